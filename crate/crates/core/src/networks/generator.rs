use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::Image2D;
use crate::error::{Error, Result};
use crate::nn::{Graph, ParamId, ParamStore, Real, Tensor, Var};

/// Channel of the attention stack that weights the input (background) path.
pub const BACKGROUND_CHANNEL: usize = 0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorArch {
    /// Width of the first encoder stage; the bottleneck has `ngf * 2^3` channels.
    pub ngf: usize,
    pub n_blocks: usize,
    /// Number of attention masks `n` (one background plus `n - 1` foreground).
    pub n_masks: usize,
    pub dropout_rate: f64,
}

impl Default for GeneratorArch {
    fn default() -> Self {
        Self {
            ngf: 8,
            n_blocks: 6,
            n_masks: 10,
            dropout_rate: 0.5,
        }
    }
}

pub const N_DOWNSAMPLING: usize = 3;

impl GeneratorArch {
    pub fn validate(&self) -> Result<()> {
        if self.n_masks < 2 {
            return Err(Error::InvalidConfig(format!(
                "n_masks must be at least 2, got {}",
                self.n_masks
            )));
        }
        if self.ngf == 0 {
            return Err(Error::InvalidConfig("ngf must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::InvalidConfig(format!(
                "dropout_rate {} outside [0, 1)",
                self.dropout_rate
            )));
        }
        Ok(())
    }

    pub fn bottleneck_channels(&self) -> usize {
        self.ngf << N_DOWNSAMPLING
    }
}

#[derive(Debug, Clone, Copy)]
struct Conv {
    w: ParamId,
    b: Option<ParamId>,
    stride: usize,
    /// Zero padding inside the convolution.
    pad: usize,
    /// Reflection padding applied before the convolution.
    reflect: usize,
}

#[derive(Debug, Clone)]
struct Decoder {
    ups: Vec<Conv>,
    out: Conv,
}

/// Encoder, residual trunk and the two decoders of one generator.
#[derive(Debug, Clone)]
pub struct Generator<T: Real = f32> {
    pub arch: GeneratorArch,
    pub params: ParamStore<T>,
    stem: Conv,
    downs: Vec<Conv>,
    blocks: Vec<(Conv, Conv)>,
    content: Decoder,
    attention: Decoder,
}

/// Tape handles of one generator pass.
#[derive(Debug, Clone, Copy)]
pub struct FusionVars {
    /// n×H×W softmax stack; channel [`BACKGROUND_CHANNEL`] is the background.
    pub attention: Var,
    pub a_back: Var,
    pub a_fore: Var,
    /// (n−1)×H×W content stack in [-1, 1].
    pub content: Var,
    pub o_fore: Var,
    pub o_back: Var,
    pub output: Var,
}

/// Materialized intermediates of one generator pass.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionProducts {
    pub a_fore: Tensor<f32>,
    pub a_back: Image2D,
    pub c_fore: Tensor<f32>,
    pub o_fore: Image2D,
    pub o_back: Image2D,
    pub output: Image2D,
}

impl FusionProducts {
    pub fn from_graph<T: Real>(g: &Graph<T>, v: &FusionVars) -> Self {
        Self {
            a_fore: g.value(v.a_fore).cast(),
            a_back: Image2D::from_tensor(g.value(v.a_back)),
            c_fore: g.value(v.content).cast(),
            o_fore: Image2D::from_tensor(g.value(v.o_fore)),
            o_back: Image2D::from_tensor(g.value(v.o_back)),
            output: Image2D::from_tensor(g.value(v.output)),
        }
    }
}

pub(crate) fn gaussian_tensor<T: Real>(shape: &[usize], std: f64, rng: &mut impl Rng) -> Tensor<T> {
    let n: usize = shape.iter().product();
    let normal = Normal::new(0.0, std).expect("valid std");
    Tensor::from_vec(shape, (0..n).map(|_| T::of(normal.sample(rng))).collect())
}

struct Builder<'a, T: Real, R: Rng> {
    store: &'a mut ParamStore<T>,
    rng: &'a mut R,
    std: f64,
}

impl<T: Real, R: Rng> Builder<'_, T, R> {
    #[allow(clippy::too_many_arguments)]
    fn conv(
        &mut self,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        pad: usize,
        reflect: usize,
        bias: bool,
    ) -> Conv {
        let w = self.store.add(
            format!("{name}.weight"),
            gaussian_tensor(&[cout, cin, k, k], self.std, self.rng),
        );
        let b = bias.then(|| self.store.add(format!("{name}.bias"), Tensor::zeros(&[cout])));
        Conv {
            w,
            b,
            stride,
            pad,
            reflect,
        }
    }

    fn decoder(&mut self, name: &str, ngf: usize, out_channels: usize) -> Decoder {
        let mut ups = Vec::new();
        for i in 0..N_DOWNSAMPLING {
            let cin = ngf << (N_DOWNSAMPLING - i);
            ups.push(self.conv(&format!("{name}.up{i}"), cin, cin / 2, 3, 1, 0, 1, false));
        }
        let out = self.conv(&format!("{name}.out"), ngf, out_channels, 7, 1, 0, 3, true);
        Decoder { ups, out }
    }
}

impl<T: Real> Generator<T> {
    /// Fresh generator with N(0, `std`) weights and zero biases.
    pub fn new(arch: GeneratorArch, std: f64, rng: &mut impl Rng) -> Result<Self> {
        arch.validate()?;
        let mut store = ParamStore::new();
        let mut b = Builder {
            store: &mut store,
            rng,
            std,
        };
        let ngf = arch.ngf;
        // convolutions followed by instance norm carry no bias: it would be normalized away
        let stem = b.conv("enc.stem", 1, ngf, 7, 1, 0, 3, false);
        let downs = (0..N_DOWNSAMPLING)
            .map(|i| b.conv(&format!("enc.down{i}"), ngf << i, ngf << (i + 1), 3, 2, 1, 0, false))
            .collect();
        let c = arch.bottleneck_channels();
        let blocks = (0..arch.n_blocks)
            .map(|i| {
                (
                    b.conv(&format!("enc.res{i}.a"), c, c, 3, 1, 0, 1, false),
                    b.conv(&format!("enc.res{i}.b"), c, c, 3, 1, 0, 1, false),
                )
            })
            .collect();
        let content = b.decoder("content", ngf, arch.n_masks - 1);
        let attention = b.decoder("attention", ngf, arch.n_masks);
        Ok(Self {
            arch,
            params: store,
            stem,
            downs,
            blocks,
            content,
            attention,
        })
    }

    /// Same architecture with parameters converted to another precision.
    pub fn cast<U: Real>(&self) -> Generator<U> {
        Generator {
            arch: self.arch.clone(),
            params: self.params.cast(),
            stem: self.stem,
            downs: self.downs.clone(),
            blocks: self.blocks.clone(),
            content: self.content.clone(),
            attention: self.attention.clone(),
        }
    }

    /// Pins the attention decoder to A_back = 1, A_fore = 0 so the generator is the identity.
    pub fn force_background_attention(&mut self) {
        let out = self.attention.out;
        self.params.get_mut(out.w).data_mut().fill(T::zero());
        let bias = self.params.get_mut(out.b.expect("output conv has a bias"));
        bias.data_mut().fill(T::zero());
        bias.data_mut()[BACKGROUND_CHANNEL] = T::of(1e4);
    }

    fn apply(&self, g: &mut Graph<T>, conv: &Conv, x: Var, trainable: bool) -> Var {
        let x = if conv.reflect > 0 {
            g.reflect_pad(x, conv.reflect)
        } else {
            x
        };
        let w = g.param(&self.params, conv.w, trainable);
        let b = conv.b.map(|b| g.param(&self.params, b, trainable));
        g.conv2d(x, w, b, conv.stride, conv.pad)
    }

    fn norm_relu(&self, g: &mut Graph<T>, conv: &Conv, x: Var, trainable: bool) -> Var {
        let y = self.apply(g, conv, x, trainable);
        let y = g.instance_norm(y);
        g.relu(y)
    }

    fn decode(&self, g: &mut Graph<T>, dec: &Decoder, z: Var, trainable: bool) -> Var {
        let mut h = z;
        for up in &dec.ups {
            let u = g.upsample2(h);
            h = self.norm_relu(g, up, u, trainable);
        }
        self.apply(g, &dec.out, h, trainable)
    }

    /// Builds the forward pass on `g`.
    ///
    /// `dropout` supplies the random state for the residual-block dropout; `None`
    /// disables it. With `trainable = false` no parameter gradients are recorded,
    /// though gradients still flow to `x`.
    pub fn forward(
        &self,
        g: &mut Graph<T>,
        x: Var,
        mut dropout: Option<&mut dyn rand::RngCore>,
        trainable: bool,
    ) -> Result<FusionVars> {
        let (c, h, w) = g.value(x).chw();
        let factor = 1 << N_DOWNSAMPLING;
        if c != 1 || h % factor != 0 || w % factor != 0 || h == 0 || w == 0 {
            return Err(Error::ShapeMismatch(format!(
                "generator input must be 1×H×W with H, W divisible by {factor}; got {c}×{h}×{w}"
            )));
        }
        let mut hcur = self.norm_relu(g, &self.stem, x, trainable);
        for d in &self.downs {
            hcur = self.norm_relu(g, d, hcur, trainable);
        }
        let keep = 1.0 - self.arch.dropout_rate;
        for (a, b) in &self.blocks {
            let mut r = self.norm_relu(g, a, hcur, trainable);
            if let Some(rng) = dropout.as_deref_mut() {
                if self.arch.dropout_rate > 0.0 {
                    let inv = T::of(1.0 / keep);
                    let mask = (0..g.value(r).len())
                        .map(|_| {
                            if rng.random_bool(keep) {
                                inv
                            } else {
                                T::zero()
                            }
                        })
                        .collect();
                    r = g.dropout_with_mask(r, mask);
                }
            }
            let r = self.apply(g, b, r, trainable);
            let r = g.instance_norm(r);
            hcur = g.add(hcur, r);
        }
        let content_logits = self.decode(g, &self.content, hcur, trainable);
        let content = g.tanh(content_logits);
        let attention_logits = self.decode(g, &self.attention, hcur, trainable);
        let attention = g.softmax_channels(attention_logits);
        Ok(fuse(g, x, content, attention))
    }

    pub fn num_parameters(&self) -> usize {
        self.params.num_scalars()
    }
}

/// output = Σ_i C_i ⊙ A_fore_i + x ⊙ A_back, with A_back the background channel.
pub fn fuse<T: Real>(g: &mut Graph<T>, x: Var, content: Var, attention: Var) -> FusionVars {
    let n = g.value(attention).chw().0;
    assert_eq!(g.value(content).chw().0, n - 1, "content/attention channel mismatch");
    let a_back = g.narrow_channels(attention, BACKGROUND_CHANNEL, 1);
    let a_fore = g.narrow_channels(attention, BACKGROUND_CHANNEL + 1, n - 1);
    let weighted = g.mul(content, a_fore);
    let o_fore = g.sum_channels(weighted);
    let o_back = g.mul(x, a_back);
    let output = g.add(o_fore, o_back);
    FusionVars {
        attention,
        a_back,
        a_fore,
        content,
        o_fore,
        o_back,
        output,
    }
}

/// One generator pass outside training. Dropout is drawn from `rng` when active.
pub fn generator_forward(
    gen: &Generator<f32>,
    x: &Image2D,
    dropout_active: bool,
    rng: &mut dyn rand::RngCore,
) -> Result<FusionProducts> {
    let mut g = Graph::new();
    let xv = g.constant(x.to_tensor());
    let vars = gen.forward(&mut g, xv, dropout_active.then_some(rng), false)?;
    Ok(FusionProducts::from_graph(&g, &vars))
}
