//! Small four-level encoder-decoder lesion segmenter with skip connections.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{BinaryMask2D, Image2D};
use crate::error::{Error, Result};
use crate::networks::generator::gaussian_tensor;
use crate::nn::{Adam, Graph, ParamId, ParamStore, Tensor, Var};
use crate::rng::{rng_for, stream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SegmenterConfig {
    pub base_channels: usize,
    pub levels: usize,
    pub iterations: usize,
    pub lr: f64,
    /// Random horizontal flips of training pairs.
    pub mirror: bool,
    pub dice_weight: f64,
}

impl Default for SegmenterConfig {
    fn default() -> Self {
        Self {
            base_channels: 8,
            levels: 4,
            iterations: 400,
            lr: 2e-3,
            mirror: true,
            dice_weight: 1.0,
        }
    }
}

impl SegmenterConfig {
    pub fn validate(&self) -> Result<()> {
        if self.base_channels == 0 || self.levels < 2 || self.iterations == 0 {
            return Err(Error::InvalidConfig(
                "segmenter needs base_channels > 0, levels >= 2, iterations > 0".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
struct Conv {
    w: ParamId,
    b: Option<ParamId>,
    stride: usize,
    pad: usize,
}

#[derive(Debug, Clone)]
pub struct Segmenter {
    pub config: SegmenterConfig,
    pub params: ParamStore<f32>,
    /// Two convolutions per encoder level; the first one downsamples below level 0.
    enc: Vec<(Conv, Conv)>,
    /// Up-convolution and merge convolution per decoder level, deepest first.
    dec: Vec<(Conv, Conv)>,
    out: Conv,
}

impl Segmenter {
    pub fn new(config: SegmenterConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::new();
        let mut conv = |name: String, cin: usize, cout: usize, k: usize, stride: usize, bias: bool| {
            let s = (2.0 / (cin * k * k) as f64).sqrt();
            let w = params.add(format!("{name}.weight"), gaussian_tensor(&[cout, cin, k, k], s, rng));
            let b = bias.then(|| params.add(format!("{name}.bias"), Tensor::zeros(&[cout])));
            Conv {
                w,
                b,
                stride,
                pad: k / 2,
            }
        };
        let ch = |l: usize| config.base_channels << l;
        let mut enc = Vec::new();
        for l in 0..config.levels {
            let cin = if l == 0 { 1 } else { ch(l - 1) };
            let stride = if l == 0 { 1 } else { 2 };
            enc.push((
                conv(format!("enc{l}.a"), cin, ch(l), 3, stride, false),
                conv(format!("enc{l}.b"), ch(l), ch(l), 3, 1, false),
            ));
        }
        let mut dec = Vec::new();
        for l in (0..config.levels - 1).rev() {
            dec.push((
                conv(format!("dec{l}.up"), ch(l + 1), ch(l), 3, 1, false),
                conv(format!("dec{l}.merge"), 2 * ch(l), ch(l), 3, 1, false),
            ));
        }
        let out = conv("out".into(), ch(0), 1, 1, 1, true);
        Ok(Self {
            config,
            params,
            enc,
            dec,
            out,
        })
    }

    fn apply(&self, g: &mut Graph<f32>, c: &Conv, x: Var, trainable: bool) -> Var {
        let w = g.param(&self.params, c.w, trainable);
        let b = c.b.map(|b| g.param(&self.params, b, trainable));
        g.conv2d(x, w, b, c.stride, c.pad)
    }

    fn block(&self, g: &mut Graph<f32>, c: &Conv, x: Var, trainable: bool) -> Var {
        let y = self.apply(g, c, x, trainable);
        let y = g.instance_norm(y);
        g.relu(y)
    }

    /// Logit map, 1×H×W.
    pub fn forward(&self, g: &mut Graph<f32>, x: Var, trainable: bool) -> Result<Var> {
        let (c, h, w) = g.value(x).chw();
        let factor = 1 << (self.config.levels - 1);
        if c != 1 || h % factor != 0 || w % factor != 0 {
            return Err(Error::ShapeMismatch(format!(
                "segmenter input must be 1×H×W with sides divisible by {factor}, got {c}×{h}×{w}"
            )));
        }
        let mut skips = Vec::new();
        let mut hcur = x;
        for (a, b) in &self.enc {
            hcur = self.block(g, a, hcur, trainable);
            hcur = self.block(g, b, hcur, trainable);
            skips.push(hcur);
        }
        skips.pop();
        for (up, merge) in &self.dec {
            let u = g.upsample2(hcur);
            let u = self.block(g, up, u, trainable);
            let skip = skips.pop().expect("one skip per decoder level");
            let cat = g.concat_channels(&[u, skip]);
            hcur = self.block(g, merge, cat, trainable);
        }
        Ok(self.apply(g, &self.out, hcur, trainable))
    }

    pub fn predict(&self, x: &Image2D) -> Result<BinaryMask2D> {
        let mut g = Graph::new();
        let xv = g.constant(x.to_tensor());
        let logits = self.forward(&mut g, xv, false)?;
        let v = g.value(logits).data();
        let (h, w) = x.shape();
        Ok(BinaryMask2D::from_fn(h, w, |y, x| v[y * w + x] > 0.0))
    }
}

/// Binary cross-entropy plus `dice_weight` times the soft Dice loss.
fn seg_loss(g: &mut Graph<f32>, logits: Var, target: &BinaryMask2D, dice_weight: f64) -> Var {
    let t: Vec<f32> = target.pixels().iter().map(|&p| p as f32).collect();
    let n = t.len() as f64;
    let bce = g.bce_with_logits(logits, &t);
    if dice_weight == 0.0 {
        return bce;
    }
    let shape = g.value(logits).shape().to_vec();
    let sum_t: f64 = t.iter().map(|&v| v as f64).sum();
    let tv = g.constant(Tensor::from_vec(&shape, t));
    let p = g.sigmoid(logits);
    let pt = g.mul(p, tv);
    let inter = g.mean(pt);
    let inter = g.scale(inter, 2.0 * n);
    let inter = g.add_scalar(inter, 1.0);
    let sum_p = g.mean(p);
    let sum_p = g.scale(sum_p, n);
    let denom = g.add_scalar(sum_p, sum_t + 1.0);
    let inv = g.recip(denom);
    let ratio = g.mul(inter, inv);
    let soft = g.scale(ratio, -dice_weight);
    let soft = g.add_scalar(soft, dice_weight);
    g.add(bce, soft)
}

/// Trains a fresh segmenter on `(image, mask)` pairs.
pub fn train_segmenter(
    data: &[(Image2D, BinaryMask2D)],
    cfg: &SegmenterConfig,
    seed: u64,
) -> Result<Segmenter> {
    if data.is_empty() {
        return Err(Error::EmptyDataset("segmenter training set is empty".into()));
    }
    let mut rng = rng_for(seed, &[stream::SEGMENT]);
    let mut seg = Segmenter::new(cfg.clone(), &mut rng)?;
    let mut adam = Adam::new(&seg.params, 0.9, 0.999);
    for _ in 0..cfg.iterations {
        let (img, mask) = &data[rng.random_range(0..data.len())];
        let flip = cfg.mirror && rng.random_bool(0.5);
        let (img, mask) = if flip {
            (img.mirrored(), mask.mirrored())
        } else {
            (img.clone(), mask.clone())
        };
        let mut g = Graph::new();
        let x = g.constant(img.to_tensor());
        let logits = seg.forward(&mut g, x, true)?;
        let loss = seg_loss(&mut g, logits, &mask, cfg.dice_weight);
        let value = g.value(loss).item();
        if !value.is_finite() {
            return Err(Error::NonFiniteLoss {
                epoch: 0,
                iteration: adam.steps_taken() as usize,
                detail: "segmenter loss".into(),
            });
        }
        let grads = g.backward(loss);
        adam.step(&mut seg.params, &grads, cfg.lr);
    }
    Ok(seg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::dice;

    #[test]
    fn soft_dice_loss_matches_direct_formula() {
        let mut rng = rng_for(2, &[]);
        let logits: Vec<f32> = (0..16).map(|_| rng.random_range(-2.0..2.0)).collect();
        let mask = BinaryMask2D::from_fn(4, 4, |y, x| y < 2 && x > 0);
        let mut g = Graph::new();
        let l = g.input(Tensor::from_vec(&[1, 4, 4], logits.clone()));
        let loss = seg_loss(&mut g, l, &mask, 1.0);
        let sig: Vec<f64> = logits.iter().map(|&v| 1.0 / (1.0 + (-(v as f64)).exp())).collect();
        let t: Vec<f64> = mask.pixels().iter().map(|&p| p as f64).collect();
        let bce: f64 = sig
            .iter()
            .zip(&t)
            .map(|(p, t)| -(t * p.ln() + (1.0 - t) * (1.0 - p).ln()))
            .sum::<f64>()
            / 16.0;
        let inter: f64 = sig.iter().zip(&t).map(|(p, t)| p * t).sum();
        let soft = 1.0 - (2.0 * inter + 1.0) / (sig.iter().sum::<f64>() + t.iter().sum::<f64>() + 1.0);
        assert!((g.value(loss).item() as f64 - bce - soft).abs() < 1e-5);
    }

    #[test]
    fn learns_bright_blobs() {
        let mut rng = rng_for(0, &[]);
        let sample = |rng: &mut rand_chacha::ChaCha8Rng| {
            let cy = rng.random_range(6..26) as f64;
            let cx = rng.random_range(6..26) as f64;
            let m = BinaryMask2D::from_fn(32, 32, |y, x| (y as f64 - cy).powi(2) + (x as f64 - cx).powi(2) <= 9.0);
            let img = Image2D::from_fn(32, 32, |y, x| {
                let noise = rng.random_range(-0.1..0.1);
                if m.get(y, x) { 0.6 + noise } else { noise }
            });
            (img, m)
        };
        let train: Vec<_> = (0..4).map(|_| sample(&mut rng)).collect();
        let cfg = SegmenterConfig {
            base_channels: 4,
            iterations: 150,
            ..Default::default()
        };
        let seg = train_segmenter(&train, &cfg, 1).unwrap();
        let (img, m) = sample(&mut rng);
        let d = dice(&seg.predict(&img).unwrap(), &m).unwrap();
        assert!(d > 0.8, "dice {d}");
    }
}
