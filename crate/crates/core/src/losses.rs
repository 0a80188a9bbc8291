//! Least-squares adversarial, cycle and identity objectives.
//!
//! Every loss exists as a tape op builder (used in training) and as a scalar
//! function on plain tensors (used for reporting and tests); the scalar versions
//! run the same builders on a throwaway graph.

use serde::{Deserialize, Serialize};

use crate::data::Image2D;
use crate::error::{Error, Result};
use crate::nn::{Graph, Real, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_h: f64,
    pub lambda_p: f64,
    pub lambda_idt: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_h: 10.0,
            lambda_p: 10.0,
            lambda_idt: 0.5,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.lambda_h, self.lambda_p, self.lambda_idt];
        if all.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidConfig(format!(
                "loss weights must be finite and non-negative: {self:?}"
            )));
        }
        Ok(())
    }
}

/// Per-iteration loss values, serialized into the training log.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub g_h: f64,
    pub g_p: f64,
    pub cc: f64,
    pub idt: f64,
    pub g_total: f64,
    pub d_h: f64,
    pub d_p: f64,
    pub d_f: f64,
}

impl LossReport {
    pub fn is_finite(&self) -> bool {
        [
            self.g_h, self.g_p, self.cc, self.idt, self.g_total, self.d_h, self.d_p, self.d_f,
        ]
        .iter()
        .all(|v| v.is_finite())
    }
}

fn nonempty<T: Real>(g: &Graph<T>, v: Var, what: &str) -> Result<()> {
    if g.value(v).is_empty() {
        return Err(Error::EmptyInput(format!("{what} score map is empty")));
    }
    Ok(())
}

fn same_shape<T: Real>(g: &Graph<T>, a: Var, b: Var, what: &str) -> Result<()> {
    if g.value(a).shape() != g.value(b).shape() {
        return Err(Error::ShapeMismatch(format!(
            "{what}: {:?} vs {:?}",
            g.value(a).shape(),
            g.value(b).shape()
        )));
    }
    Ok(())
}

/// mean((s - target)^2)
pub fn lsgan<T: Real>(g: &mut Graph<T>, scores: Var, target: f64) -> Var {
    let d = g.add_scalar(scores, -target);
    let sq = g.square(d);
    g.mean(sq)
}

/// Adversarial term for G_H: mean((D_H(G_H(x_P)) - 1)^2).
pub fn gen_healthy<T: Real>(g: &mut Graph<T>, scores: Var) -> Result<Var> {
    nonempty(g, scores, "D_H")?;
    Ok(lsgan(g, scores, 1.0))
}

/// Adversarial term for G_P: mean((½(p + f) - 1)^2), averaging the maps before squaring.
///
/// Maps of different shapes are reconciled by nearest-neighbour resizing of the
/// smaller one.
pub fn gen_pathological<T: Real>(g: &mut Graph<T>, p_scores: Var, f_scores: Var) -> Result<Var> {
    nonempty(g, p_scores, "D_P")?;
    nonempty(g, f_scores, "D_F")?;
    let (pc, ph, pw) = g.value(p_scores).chw();
    let (fc, fh, fw) = g.value(f_scores).chw();
    if pc != fc {
        return Err(Error::ShapeMismatch(format!(
            "D_P and D_F maps have {pc} and {fc} channels"
        )));
    }
    let (p, f) = if (ph, pw) == (fh, fw) {
        (p_scores, f_scores)
    } else if ph * pw >= fh * fw {
        log::warn!("D_F map {fh}x{fw} resized to D_P map {ph}x{pw}");
        (p_scores, g.resize_nearest(f_scores, ph, pw))
    } else {
        log::warn!("D_P map {ph}x{pw} resized to D_F map {fh}x{fw}");
        (g.resize_nearest(p_scores, fh, fw), f_scores)
    };
    let sum = g.add(p, f);
    let avg = g.scale(sum, 0.5);
    Ok(lsgan(g, avg, 1.0))
}

/// mean|a - b|
pub fn l1<T: Real>(g: &mut Graph<T>, a: Var, b: Var) -> Result<Var> {
    same_shape(g, a, b, "L1 operands")?;
    let d = g.sub(a, b);
    let abs = g.abs(d);
    Ok(g.mean(abs))
}

/// λ_H · mean|rec_H − x_H| + λ_P · mean|rec_P − x_P|
pub fn cycle<T: Real>(
    g: &mut Graph<T>,
    x_h: Var,
    rec_h: Var,
    x_p: Var,
    rec_p: Var,
    w: &LossWeights,
) -> Result<Var> {
    let a = l1(g, rec_h, x_h)?;
    let b = l1(g, rec_p, x_p)?;
    let a = g.scale(a, w.lambda_h);
    let b = g.scale(b, w.lambda_p);
    Ok(g.add(a, b))
}

/// λ_H·λ_idt · mean|G_H(x_H) − x_H| + λ_P·λ_idt · mean|G_P(x_P) − x_P|
pub fn identity<T: Real>(
    g: &mut Graph<T>,
    x_h: Var,
    idt_h: Var,
    x_p: Var,
    idt_p: Var,
    w: &LossWeights,
) -> Result<Var> {
    let a = l1(g, idt_h, x_h)?;
    let b = l1(g, idt_p, x_p)?;
    let a = g.scale(a, w.lambda_h * w.lambda_idt);
    let b = g.scale(b, w.lambda_p * w.lambda_idt);
    Ok(g.add(a, b))
}

/// mean((real - 1)^2) + mean(fake^2)
pub fn disc<T: Real>(g: &mut Graph<T>, real: Var, fake: Var) -> Result<Var> {
    nonempty(g, real, "real")?;
    nonempty(g, fake, "fake")?;
    let r = lsgan(g, real, 1.0);
    let f = lsgan(g, fake, 0.0);
    Ok(g.add(r, f))
}

/// Sum of the four generator terms.
pub fn gen_total<T: Real>(g: &mut Graph<T>, parts: [Var; 4]) -> Var {
    let a = g.add(parts[0], parts[1]);
    let b = g.add(parts[2], parts[3]);
    g.add(a, b)
}

fn scalar(f: impl FnOnce(&mut Graph<f64>) -> Result<Var>) -> Result<f64> {
    let mut g = Graph::new();
    let v = f(&mut g)?;
    Ok(g.value(v).item())
}

fn img(g: &mut Graph<f64>, x: &Image2D) -> Var {
    g.constant(x.to_tensor())
}

fn map(g: &mut Graph<f64>, t: &Tensor<f64>) -> Var {
    let t = if t.shape().len() == 3 {
        t.clone()
    } else {
        Tensor::from_vec(&[1, 1, t.len()], t.data().to_vec())
    };
    g.constant(t)
}

pub fn loss_gen_healthy(scores: &Tensor<f64>) -> Result<f64> {
    scalar(|g| {
        let s = map(g, scores);
        gen_healthy(g, s)
    })
}

pub fn loss_gen_pathological(p_scores: &Tensor<f64>, f_scores: &Tensor<f64>) -> Result<f64> {
    scalar(|g| {
        let p = map(g, p_scores);
        let f = map(g, f_scores);
        gen_pathological(g, p, f)
    })
}

pub fn loss_cycle(
    x_h: &Image2D,
    rec_h: &Image2D,
    x_p: &Image2D,
    rec_p: &Image2D,
    w: &LossWeights,
) -> Result<f64> {
    scalar(|g| {
        let (a, b, c, d) = (img(g, x_h), img(g, rec_h), img(g, x_p), img(g, rec_p));
        cycle(g, a, b, c, d, w)
    })
}

pub fn loss_identity(
    x_h: &Image2D,
    idt_h: &Image2D,
    x_p: &Image2D,
    idt_p: &Image2D,
    w: &LossWeights,
) -> Result<f64> {
    scalar(|g| {
        let (a, b, c, d) = (img(g, x_h), img(g, idt_h), img(g, x_p), img(g, idt_p));
        identity(g, a, b, c, d, w)
    })
}

pub fn loss_disc(real: &Tensor<f64>, fake: &Tensor<f64>) -> Result<f64> {
    scalar(|g| {
        let r = map(g, real);
        let f = map(g, fake);
        disc(g, r, f)
    })
}

pub fn loss_gen_total(g_h: f64, g_p: f64, cc: f64, idt: f64) -> f64 {
    g_h + g_p + cc + idt
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn t(vals: &[f64]) -> Tensor<f64> {
        Tensor::from_vec(&[1, 1, vals.len()], vals.to_vec())
    }

    fn fill(v: f64) -> Tensor<f64> {
        Tensor::full(&[1, 3, 3], v)
    }

    fn im(vals: Vec<f32>) -> Image2D {
        Image2D::new(2, 2, vals).unwrap()
    }

    #[test]
    fn gen_healthy_examples() {
        assert_eq!(loss_gen_healthy(&fill(1.0)).unwrap(), 0.0);
        assert_eq!(loss_gen_healthy(&fill(0.0)).unwrap(), 1.0);
        assert!((loss_gen_healthy(&t(&[0.5, 1.5])).unwrap() - 0.25).abs() < 1e-12);
        assert!(loss_gen_healthy(&Tensor::from_vec(&[1, 0, 0], vec![])).is_err());
    }

    #[test]
    fn gen_pathological_examples() {
        assert_eq!(loss_gen_pathological(&fill(1.0), &fill(1.0)).unwrap(), 0.0);
        assert!((loss_gen_pathological(&fill(1.0), &fill(0.0)).unwrap() - 0.25).abs() < 1e-12);
        assert_eq!(loss_gen_pathological(&fill(0.0), &fill(0.0)).unwrap(), 1.0);
    }

    #[test]
    fn gen_pathological_resizes_mismatched_maps() {
        let p = Tensor::full(&[1, 4, 4], 1.0);
        let f = Tensor::full(&[1, 1, 1], 0.0);
        assert!((loss_gen_pathological(&p, &f).unwrap() - 0.25).abs() < 1e-12);
        assert!((loss_gen_pathological(&f, &p).unwrap() - 0.25).abs() < 1e-12);
    }

    #[test]
    fn cycle_examples() {
        let w = LossWeights::default();
        let x_h = im(vec![0.1, -0.2, 0.3, 0.0]);
        let x_p = im(vec![-0.5, 0.5, 0.25, 0.75]);
        assert_eq!(loss_cycle(&x_h, &x_h, &x_p, &x_p, &w).unwrap(), 0.0);
        let shifted = im(x_h.pixels().iter().map(|v| v + 0.1).collect());
        let got = loss_cycle(&x_h, &shifted, &x_p, &x_p, &w).unwrap();
        assert!((got - 1.0).abs() < 1e-6, "{got}");
        let zero = LossWeights {
            lambda_h: 0.0,
            lambda_p: 0.0,
            ..w
        };
        assert_eq!(loss_cycle(&x_h, &shifted, &x_p, &x_h, &zero).unwrap(), 0.0);
        let odd = Image2D::filled(3, 3, 0.0);
        assert!(matches!(
            loss_cycle(&x_h, &odd, &x_p, &x_p, &w),
            Err(Error::ShapeMismatch(_))
        ));
    }

    #[test]
    fn identity_examples() {
        let w = LossWeights::default();
        let x_h = im(vec![0.1, -0.2, 0.3, 0.0]);
        let x_p = im(vec![-0.5, 0.5, 0.25, 0.75]);
        assert_eq!(loss_identity(&x_h, &x_h, &x_p, &x_p, &w).unwrap(), 0.0);
        let shifted = im(x_h.pixels().iter().map(|v| v + 0.2).collect());
        let got = loss_identity(&x_h, &shifted, &x_p, &x_p, &w).unwrap();
        assert!((got - 1.0).abs() < 1e-6, "{got}");
        let no_idt = LossWeights {
            lambda_idt: 0.0,
            ..w
        };
        assert_eq!(loss_identity(&x_h, &shifted, &x_p, &x_h, &no_idt).unwrap(), 0.0);
    }

    #[test]
    fn total_and_disc_examples() {
        assert_eq!(loss_gen_total(0.0, 0.0, 0.0, 0.0), 0.0);
        assert_eq!(loss_gen_total(0.25, 0.25, 1.0, 1.0), 2.5);
        assert_eq!(loss_disc(&fill(1.0), &fill(0.0)).unwrap(), 0.0);
        assert_eq!(loss_disc(&fill(0.0), &fill(1.0)).unwrap(), 2.0);
        assert!((loss_disc(&fill(0.5), &fill(0.5)).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn graph_total_matches_sum() {
        let mut g = Graph::<f64>::new();
        let parts = [0.3, 1.7, 0.05, 2.2].map(|v| g.constant(Tensor::scalar(v)));
        let tot = gen_total(&mut g, parts);
        assert!((g.value(tot).item() - 4.25).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn cycle_and_identity_are_homogeneous(
            res in proptest::collection::vec(-1.0f32..1.0, 4),
            s in -3.0f32..3.0,
        ) {
            let w = LossWeights::default();
            let x = im(vec![0.0; 4]);
            let r = im(res.clone());
            let rs = im(res.iter().map(|v| v * s).collect());
            let base = loss_cycle(&x, &r, &x, &r, &w).unwrap();
            let scaled = loss_cycle(&x, &rs, &x, &rs, &w).unwrap();
            prop_assert!((scaled - s.abs() as f64 * base).abs() < 1e-5 * (1.0 + base));
            let base = loss_identity(&x, &r, &x, &r, &w).unwrap();
            let scaled = loss_identity(&x, &rs, &x, &rs, &w).unwrap();
            prop_assert!((scaled - s.abs() as f64 * base).abs() < 1e-5 * (1.0 + base));
        }

        #[test]
        fn weights_inside_equal_weights_outside(
            a in proptest::collection::vec(-1.0f32..1.0, 4),
            b in proptest::collection::vec(-1.0f32..1.0, 4),
            lh in 0.0f64..20.0,
            lp in 0.0f64..20.0,
        ) {
            let w = LossWeights { lambda_h: lh, lambda_p: lp, lambda_idt: 0.5 };
            let (x, ra, rb) = (im(vec![0.0; 4]), im(a.clone()), im(b.clone()));
            let got = loss_cycle(&x, &ra, &x, &rb, &w).unwrap();
            let inside = a.iter().map(|v| lh * v.abs() as f64).sum::<f64>() / 4.0
                + b.iter().map(|v| lp * v.abs() as f64).sum::<f64>() / 4.0;
            prop_assert!((got - inside).abs() < 1e-9 * (1.0 + inside));
        }

        #[test]
        fn losses_are_non_negative(
            r in proptest::collection::vec(-3.0f64..3.0, 1..10),
            f in proptest::collection::vec(-3.0f64..3.0, 1..10),
        ) {
            let (rt, ft) = (t(&r), t(&f));
            prop_assert!(loss_gen_healthy(&rt).unwrap() >= 0.0);
            prop_assert!(loss_disc(&rt, &ft).unwrap() >= 0.0);
            prop_assert!(loss_gen_pathological(&rt, &rt).unwrap() >= 0.0);
        }
    }
}
