//! Multi-level cubic B-spline free-form deformation, fitted by gradient descent
//! on mean squared difference plus a control-point smoothness penalty.

use serde::{Deserialize, Serialize};

use crate::data::ops::{gaussian_blur, sample_bilinear, warp_image, DisplacementField};
use crate::data::Image2D;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FfdConfig {
    /// Control-point spacing per level in pixels, coarse to fine.
    pub spacings: Vec<usize>,
    pub steps_per_level: usize,
    /// Largest control-point move of the first step, in pixels.
    pub step_size: f64,
    /// Weight of the mean squared difference between neighbouring control points.
    pub smoothness: f64,
    /// Both images are blurred with sigma = spacing * this factor at each level.
    pub blur_per_spacing: f64,
}

impl Default for FfdConfig {
    fn default() -> Self {
        Self {
            spacings: vec![32, 16, 8],
            steps_per_level: 60,
            step_size: 0.5,
            smoothness: 1e-3,
            blur_per_spacing: 1.0 / 16.0,
        }
    }
}

impl FfdConfig {
    pub fn validate(&self) -> Result<()> {
        if self.spacings.is_empty() || self.spacings.contains(&0) {
            return Err(Error::InvalidConfig("FFD spacings must be positive".into()));
        }
        if self.spacings.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::InvalidConfig(format!(
                "FFD spacings must be strictly decreasing, got {:?}",
                self.spacings
            )));
        }
        if self.steps_per_level == 0 {
            return Err(Error::InvalidConfig("steps_per_level must be at least 1".into()));
        }
        if !(self.step_size > 0.0 && self.smoothness >= 0.0 && self.blur_per_spacing >= 0.0) {
            return Err(Error::InvalidConfig("invalid FFD step, smoothness or blur".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Registration {
    pub warped: Image2D,
    pub field: DisplacementField,
    pub ssd_before: f64,
    pub ssd_after: f64,
}

fn bspline(u: f64) -> [f64; 4] {
    let u2 = u * u;
    let u3 = u2 * u;
    [
        (1.0 - u).powi(3) / 6.0,
        (3.0 * u3 - 6.0 * u2 + 4.0) / 6.0,
        (-3.0 * u3 + 3.0 * u2 + 3.0 * u + 1.0) / 6.0,
        u3 / 6.0,
    ]
}

/// Basis weights along one axis: first control index and the four weights.
fn axis_weights(len: usize, spacing: usize) -> (usize, Vec<(usize, [f64; 4])>) {
    let nodes = (len - 1) / spacing + 4;
    let w = (0..len)
        .map(|p| {
            let t = p as f64 / spacing as f64;
            let i = t.floor();
            (i as usize, bspline(t - i))
        })
        .collect();
    (nodes, w)
}

struct Grid {
    ny: usize,
    nx: usize,
    wy: Vec<(usize, [f64; 4])>,
    wx: Vec<(usize, [f64; 4])>,
}

impl Grid {
    fn new(h: usize, w: usize, spacing: usize) -> Self {
        let (ny, wy) = axis_weights(h, spacing);
        let (nx, wx) = axis_weights(w, spacing);
        Self { ny, nx, wy, wx }
    }

    fn dense(&self, phi: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.wy.len() * self.wx.len());
        for &(iy, by) in &self.wy {
            for &(ix, bx) in &self.wx {
                let mut acc = 0.0;
                for (l, byl) in by.iter().enumerate() {
                    let row = (iy + l) * self.nx + ix;
                    for (m, bxm) in bx.iter().enumerate() {
                        acc += byl * bxm * phi[row + m];
                    }
                }
                out.push(acc);
            }
        }
        out
    }

    /// Adjoint of [`Grid::dense`].
    fn splat(&self, dense: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.ny * self.nx];
        let w = self.wx.len();
        for (y, &(iy, by)) in self.wy.iter().enumerate() {
            for (x, &(ix, bx)) in self.wx.iter().enumerate() {
                let g = dense[y * w + x];
                if g == 0.0 {
                    continue;
                }
                for (l, byl) in by.iter().enumerate() {
                    let row = (iy + l) * self.nx + ix;
                    for (m, bxm) in bx.iter().enumerate() {
                        out[row + m] += g * byl * bxm;
                    }
                }
            }
        }
        out
    }

    fn pairs(&self) -> usize {
        self.ny * (self.nx - 1) + (self.ny - 1) * self.nx
    }

    /// Mean squared neighbour difference and its gradient, accumulated into `grad`.
    fn smoothness(&self, phi: &[f64], weight: f64, grad: &mut [f64]) -> f64 {
        let n = self.pairs() as f64;
        let mut e = 0.0;
        let mut visit = |a: usize, b: usize| {
            let d = phi[a] - phi[b];
            e += d * d;
            grad[a] += 2.0 * weight * d / n;
            grad[b] -= 2.0 * weight * d / n;
        };
        for y in 0..self.ny {
            for x in 0..self.nx {
                let i = y * self.nx + x;
                if x + 1 < self.nx {
                    visit(i, i + 1);
                }
                if y + 1 < self.ny {
                    visit(i, i + self.nx);
                }
            }
        }
        weight * e / n
    }
}

fn gradients(img: &Image2D) -> (Image2D, Image2D) {
    let (h, w) = img.shape();
    let at = |y: isize, x: isize| img.get(y.clamp(0, h as isize - 1) as usize, x.clamp(0, w as isize - 1) as usize);
    let gy = Image2D::from_fn(h, w, |y, x| {
        let (y, x) = (y as isize, x as isize);
        0.5 * (at(y + 1, x) - at(y - 1, x))
    });
    let gx = Image2D::from_fn(h, w, |y, x| {
        let (y, x) = (y as isize, x as isize);
        0.5 * (at(y, x + 1) - at(y, x - 1))
    });
    (gy, gx)
}

pub fn mean_squared_difference(a: &Image2D, b: &Image2D) -> f64 {
    a.pixels()
        .iter()
        .zip(b.pixels())
        .map(|(&p, &q)| {
            let d = (p - q) as f64;
            d * d
        })
        .sum::<f64>()
        / a.pixels().len() as f64
}

struct Level<'a> {
    grid: Grid,
    moving: &'a Image2D,
    fixed: &'a Image2D,
    gy: Image2D,
    gx: Image2D,
    base_dy: &'a [f64],
    base_dx: &'a [f64],
    smoothness: f64,
}

impl Level<'_> {
    /// Objective and gradient w.r.t. the stacked (phi_y, phi_x) control values.
    fn eval(&self, phi_y: &[f64], phi_x: &[f64], want_grad: bool) -> (f64, Vec<f64>, Vec<f64>) {
        let (h, w) = self.moving.shape();
        let n = (h * w) as f64;
        let dy = self.grid.dense(phi_y);
        let dx = self.grid.dense(phi_x);
        let mut ssd = 0.0;
        let mut g_dy = vec![0.0; h * w];
        let mut g_dx = vec![0.0; h * w];
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                let sy = (y as f64 + self.base_dy[i] + dy[i]) as f32;
                let sx = (x as f64 + self.base_dx[i] + dx[i]) as f32;
                let r = (sample_bilinear(self.moving, sy, sx) - self.fixed.get(y, x)) as f64;
                ssd += r * r;
                if want_grad {
                    g_dy[i] = 2.0 * r * sample_bilinear(&self.gy, sy, sx) as f64 / n;
                    g_dx[i] = 2.0 * r * sample_bilinear(&self.gx, sy, sx) as f64 / n;
                }
            }
        }
        let mut e = ssd / n;
        if !want_grad {
            let mut scratch = vec![0.0; phi_y.len()];
            e += self.grid.smoothness(phi_y, self.smoothness, &mut scratch);
            e += self.grid.smoothness(phi_x, self.smoothness, &mut scratch);
            return (e, Vec::new(), Vec::new());
        }
        let mut gy = self.grid.splat(&g_dy);
        let mut gx = self.grid.splat(&g_dx);
        e += self.grid.smoothness(phi_y, self.smoothness, &mut gy);
        e += self.grid.smoothness(phi_x, self.smoothness, &mut gx);
        (e, gy, gx)
    }
}

/// Registers `moving` onto `fixed`. The returned field warps `moving` into the
/// frame of `fixed`; if no iterate improves the plain squared difference, the
/// identity is returned.
pub fn register_ffd(moving: &Image2D, fixed: &Image2D, cfg: &FfdConfig) -> Result<Registration> {
    cfg.validate()?;
    if moving.shape() != fixed.shape() {
        return Err(Error::ShapeMismatch(format!(
            "moving {:?} vs fixed {:?}",
            moving.shape(),
            fixed.shape()
        )));
    }
    let (h, w) = moving.shape();
    let ssd_before = mean_squared_difference(moving, fixed);
    let mut total_dy = vec![0.0f64; h * w];
    let mut total_dx = vec![0.0f64; h * w];
    for &spacing in &cfg.spacings {
        let sigma = (spacing as f64 * cfg.blur_per_spacing) as f32;
        let m = gaussian_blur(moving, sigma);
        let f = gaussian_blur(fixed, sigma);
        let (gy, gx) = gradients(&m);
        let level = Level {
            grid: Grid::new(h, w, spacing),
            moving: &m,
            fixed: &f,
            gy,
            gx,
            base_dy: &total_dy,
            base_dx: &total_dx,
            smoothness: cfg.smoothness,
        };
        let nodes = level.grid.ny * level.grid.nx;
        let mut py = vec![0.0; nodes];
        let mut px = vec![0.0; nodes];
        let (mut e, mut gy, mut gx) = level.eval(&py, &px, true);
        let mut step = cfg.step_size;
        for _ in 0..cfg.steps_per_level {
            let gmax = gy
                .iter()
                .chain(&gx)
                .fold(0.0f64, |a, &b| a.max(b.abs()));
            if gmax == 0.0 || !gmax.is_finite() {
                break;
            }
            let scale = step / gmax;
            let ny: Vec<f64> = py.iter().zip(&gy).map(|(p, g)| p - scale * g).collect();
            let nx: Vec<f64> = px.iter().zip(&gx).map(|(p, g)| p - scale * g).collect();
            let (e_new, _, _) = level.eval(&ny, &nx, false);
            if !e_new.is_finite() {
                return Err(Error::RegistrationDiverged);
            }
            if e_new < e {
                py = ny;
                px = nx;
                (e, gy, gx) = level.eval(&py, &px, true);
                step *= 1.2;
            } else {
                step *= 0.5;
                if step < 1e-4 {
                    break;
                }
            }
        }
        let dy = level.grid.dense(&py);
        let dx = level.grid.dense(&px);
        for i in 0..h * w {
            total_dy[i] += dy[i];
            total_dx[i] += dx[i];
        }
    }
    let field = DisplacementField {
        height: h,
        width: w,
        dy: total_dy.iter().map(|&v| v as f32).collect(),
        dx: total_dx.iter().map(|&v| v as f32).collect(),
    };
    if !field.is_finite() {
        return Err(Error::RegistrationDiverged);
    }
    let warped = warp_image(moving, &field);
    let ssd_after = mean_squared_difference(&warped, fixed);
    if ssd_after > ssd_before {
        return Ok(Registration {
            warped: moving.clone(),
            field: DisplacementField::zeros(h, w),
            ssd_before,
            ssd_after: ssd_before,
        });
    }
    Ok(Registration {
        warped,
        field,
        ssd_before,
        ssd_after,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phantom::{gen_healthy, PhantomSpec};
    use crate::rng::rng_for;
    use rand::Rng;

    #[test]
    fn bspline_weights_partition_unity() {
        for k in 0..=10 {
            let b = bspline(k as f64 / 10.0);
            assert!((b.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(b.iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn splat_is_adjoint_of_dense() {
        let grid = Grid::new(20, 17, 8);
        let mut rng = rng_for(1, &[]);
        let phi: Vec<f64> = (0..grid.ny * grid.nx).map(|_| rng.random_range(-1.0..1.0)).collect();
        let v: Vec<f64> = (0..20 * 17).map(|_| rng.random_range(-1.0..1.0)).collect();
        let lhs: f64 = grid.dense(&phi).iter().zip(&v).map(|(a, b)| a * b).sum();
        let rhs: f64 = grid.splat(&v).iter().zip(&phi).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-9);
    }

    #[test]
    fn constant_control_grid_is_a_translation() {
        let grid = Grid::new(16, 16, 4);
        let d = grid.dense(&vec![1.5; grid.ny * grid.nx]);
        assert!(d.iter().all(|&v| (v - 1.5).abs() < 1e-12));
    }

    #[test]
    fn identical_images_give_zero_field() {
        let img = gen_healthy(&PhantomSpec::default(), 0).unwrap().image;
        let r = register_ffd(&img, &img, &FfdConfig::default()).unwrap();
        assert!(r.field.max_magnitude() < 0.1);
        assert_eq!(r.ssd_after, 0.0);
    }

    #[test]
    fn recovers_a_two_pixel_translation() {
        let h = gen_healthy(&PhantomSpec::default(), 3).unwrap();
        let moving = h.image;
        let fixed = Image2D::from_fn(64, 64, |y, x| moving.get(y, x.saturating_sub(2)));
        let r = register_ffd(&moving, &fixed, &FfdConfig::default()).unwrap();
        let pts = h.brain.points();
        let mean_dx: f64 = pts.iter().map(|&(y, x)| r.field.dx[y * 64 + x] as f64).sum::<f64>() / pts.len() as f64;
        let mean_dy: f64 = pts.iter().map(|&(y, x)| r.field.dy[y * 64 + x] as f64).sum::<f64>() / pts.len() as f64;
        assert!((mean_dx + 2.0).abs() <= 0.5, "mean dx {mean_dx}");
        assert!(mean_dy.abs() < 0.5, "mean dy {mean_dy}");
        assert!(r.ssd_after < 0.25 * r.ssd_before, "{} vs {}", r.ssd_after, r.ssd_before);
    }

    #[test]
    fn never_worse_than_identity() {
        let spec = PhantomSpec::default();
        for i in 0..4 {
            let a = gen_healthy(&spec, i).unwrap().image;
            let b = gen_healthy(&spec, i + 10).unwrap().image;
            let r = register_ffd(&a, &b, &FfdConfig::default()).unwrap();
            assert!(r.ssd_after <= r.ssd_before);
        }
    }

    #[test]
    fn rejects_bad_configs() {
        let bad = FfdConfig {
            spacings: vec![8, 16],
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = FfdConfig {
            steps_per_level: 0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
