use rand::Rng;
use serde::{Deserialize, Serialize};

use super::generator::gaussian_tensor;
use crate::data::Image2D;
use crate::error::{Error, Result};
use crate::nn::{conv_out, Graph, ParamId, ParamStore, Real, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiscriminatorRole {
    Healthy,
    Pathological,
    Foreground,
}

impl DiscriminatorRole {
    pub fn tag(self) -> &'static str {
        match self {
            DiscriminatorRole::Healthy => "D_H",
            DiscriminatorRole::Pathological => "D_P",
            DiscriminatorRole::Foreground => "D_F",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DiscriminatorArch {
    /// Patch discriminator: `n_layers` stride-2 4×4 convolutions, one stride-1
    /// convolution and a 1-channel stride-1 output convolution.
    Patch { ndf: usize, n_layers: usize },
    /// Returns mean(x) as a 1×1 map. Only meant for loss tests.
    Stub,
}

impl Default for DiscriminatorArch {
    fn default() -> Self {
        DiscriminatorArch::Patch {
            ndf: 16,
            n_layers: 3,
        }
    }
}

impl DiscriminatorArch {
    /// Side length of the score map for a square input.
    pub fn output_size(&self, input: usize) -> Result<usize> {
        match *self {
            DiscriminatorArch::Stub => Ok(1),
            DiscriminatorArch::Patch { n_layers, .. } => {
                let mut s = input;
                for _ in 0..n_layers {
                    s = conv_out(s, 4, 2, 1);
                }
                for _ in 0..2 {
                    if s < 3 {
                        return Err(Error::ShapeMismatch(format!(
                            "input {input} too small for a {n_layers}-layer patch discriminator"
                        )));
                    }
                    s = conv_out(s, 4, 1, 1);
                }
                Ok(s)
            }
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Layer {
    w: ParamId,
    b: Option<ParamId>,
    stride: usize,
    norm: bool,
    activation: bool,
}

#[derive(Debug, Clone)]
pub struct Discriminator<T: Real = f32> {
    pub arch: DiscriminatorArch,
    pub role: DiscriminatorRole,
    pub params: ParamStore<T>,
    layers: Vec<Layer>,
}

const LEAKY_SLOPE: f64 = 0.2;

impl<T: Real> Discriminator<T> {
    pub fn new(
        arch: DiscriminatorArch,
        role: DiscriminatorRole,
        std: f64,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let mut params = ParamStore::new();
        let mut layers = Vec::new();
        if let DiscriminatorArch::Patch { ndf, n_layers } = arch {
            if ndf == 0 || n_layers == 0 {
                return Err(Error::InvalidConfig(
                    "patch discriminator needs ndf > 0 and n_layers > 0".into(),
                ));
            }
            let mut add = |i: usize, cin: usize, cout: usize, stride: usize, norm: bool, act: bool| {
                let w = params.add(
                    format!("layer{i}.weight"),
                    gaussian_tensor(&[cout, cin, 4, 4], std, rng),
                );
                let b = (!norm).then(|| params.add(format!("layer{i}.bias"), Tensor::zeros(&[cout])));
                layers.push(Layer {
                    w,
                    b,
                    stride,
                    norm,
                    activation: act,
                });
            };
            let width = |i: usize| ndf * (1 << i.min(3));
            add(0, 1, ndf, 2, false, true);
            for i in 1..n_layers {
                add(i, width(i - 1), width(i), 2, true, true);
            }
            add(n_layers, width(n_layers - 1), width(n_layers), 1, true, true);
            add(n_layers + 1, width(n_layers), 1, 1, false, false);
        }
        Ok(Self {
            arch,
            role,
            params,
            layers,
        })
    }

    pub fn cast<U: Real>(&self) -> Discriminator<U> {
        Discriminator {
            arch: self.arch.clone(),
            role: self.role,
            params: self.params.cast(),
            layers: self.layers.clone(),
        }
    }

    /// Patch score map (1×h×w), no output nonlinearity.
    pub fn forward(&self, g: &mut Graph<T>, x: Var, trainable: bool) -> Result<Var> {
        let (c, h, w) = g.value(x).chw();
        if c != 1 {
            return Err(Error::ShapeMismatch(format!(
                "discriminator input must have one channel, got {c}"
            )));
        }
        if let DiscriminatorArch::Stub = self.arch {
            let m = g.mean(x);
            return Ok(g.reshape(m, &[1, 1, 1]));
        }
        self.arch.output_size(h.min(w))?;
        let mut y = x;
        for layer in &self.layers {
            let wv = g.param(&self.params, layer.w, trainable);
            let bv = layer.b.map(|b| g.param(&self.params, b, trainable));
            y = g.conv2d(y, wv, bv, layer.stride, 1);
            if layer.norm {
                y = g.instance_norm(y);
            }
            if layer.activation {
                y = g.leaky_relu(y, LEAKY_SLOPE);
            }
        }
        Ok(y)
    }

    pub fn num_parameters(&self) -> usize {
        self.params.num_scalars()
    }
}

/// Score map of a single image, without gradients.
pub fn discriminate(d: &Discriminator<f32>, x: &Image2D) -> Result<Tensor<f32>> {
    let mut g = Graph::new();
    let xv = g.constant(x.to_tensor());
    let out = d.forward(&mut g, xv, false)?;
    Ok(g.value(out).clone())
}
