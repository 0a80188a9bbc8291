//! Image resampling, smoothing, warping and binary morphology.

use super::image::{BinaryMask2D, Image2D};

/// Source coordinate for output index `i` under half-pixel-centre alignment.
fn source_coord(i: usize, in_len: usize, out_len: usize) -> f32 {
    let s = (i as f32 + 0.5) * in_len as f32 / out_len as f32 - 0.5;
    s.clamp(0.0, (in_len - 1) as f32)
}

/// Bilinear interpolation at fractional (y, x), clamped at the borders.
pub fn sample_bilinear(img: &Image2D, y: f32, x: f32) -> f32 {
    let (h, w) = img.shape();
    let y = y.clamp(0.0, (h - 1) as f32);
    let x = x.clamp(0.0, (w - 1) as f32);
    let y0 = y.floor() as usize;
    let x0 = x.floor() as usize;
    let y1 = (y0 + 1).min(h - 1);
    let x1 = (x0 + 1).min(w - 1);
    let fy = y - y0 as f32;
    let fx = x - x0 as f32;
    let p = img.pixels();
    let top = p[y0 * w + x0] * (1.0 - fx) + p[y0 * w + x1] * fx;
    let bottom = p[y1 * w + x0] * (1.0 - fx) + p[y1 * w + x1] * fx;
    top * (1.0 - fy) + bottom * fy
}

pub fn resize_bilinear(img: &Image2D, out_h: usize, out_w: usize) -> Image2D {
    let (h, w) = img.shape();
    if (h, w) == (out_h, out_w) {
        return img.clone();
    }
    let mut out = Image2D::from_fn(out_h, out_w, |y, x| {
        sample_bilinear(img, source_coord(y, h, out_h), source_coord(x, w, out_w))
    });
    out.spacing = (
        img.spacing.0 * h as f32 / out_h as f32,
        img.spacing.1 * w as f32 / out_w as f32,
    );
    out
}

pub fn resize_nearest_mask(mask: &BinaryMask2D, out_h: usize, out_w: usize) -> BinaryMask2D {
    let (h, w) = mask.shape();
    BinaryMask2D::from_fn(out_h, out_w, |y, x| {
        let sy = ((y as f32 + 0.5) * h as f32 / out_h as f32).floor() as usize;
        let sx = ((x as f32 + 0.5) * w as f32 / out_w as f32).floor() as usize;
        mask.get(sy.min(h - 1), sx.min(w - 1))
    })
}

fn gaussian_kernel(sigma: f32) -> Vec<f32> {
    let radius = (3.0 * sigma).ceil().max(1.0) as isize;
    let mut k: Vec<f32> = (-radius..=radius)
        .map(|i| (-(i * i) as f32 / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f32 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

/// Separable Gaussian blur with clamped borders.
pub fn gaussian_blur(img: &Image2D, sigma: f32) -> Image2D {
    if sigma <= 0.0 {
        return img.clone();
    }
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as isize;
    let (h, w) = img.shape();
    let p = img.pixels();
    let mut tmp = vec![0.0f32; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (j, kv) in k.iter().enumerate() {
                let sx = (x as isize + j as isize - r).clamp(0, w as isize - 1) as usize;
                acc += kv * p[y * w + sx];
            }
            tmp[y * w + x] = acc;
        }
    }
    let mut out = img.clone();
    let o = out.pixels_mut();
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (j, kv) in k.iter().enumerate() {
                let sy = (y as isize + j as isize - r).clamp(0, h as isize - 1) as usize;
                acc += kv * tmp[sy * w + x];
            }
            o[y * w + x] = acc;
        }
    }
    out
}

/// Dense displacement field in pixels; a warp samples `src(y + dy, x + dx)`.
#[derive(Clone, Debug, PartialEq)]
pub struct DisplacementField {
    pub height: usize,
    pub width: usize,
    pub dy: Vec<f32>,
    pub dx: Vec<f32>,
}

impl DisplacementField {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            dy: vec![0.0; height * width],
            dx: vec![0.0; height * width],
        }
    }

    pub fn magnitude(&self, i: usize) -> f32 {
        (self.dy[i] * self.dy[i] + self.dx[i] * self.dx[i]).sqrt()
    }

    pub fn max_magnitude(&self) -> f32 {
        (0..self.dy.len())
            .map(|i| self.magnitude(i))
            .fold(0.0, f32::max)
    }

    pub fn is_finite(&self) -> bool {
        self.dy.iter().chain(&self.dx).all(|v| v.is_finite())
    }
}

pub fn warp_image(img: &Image2D, field: &DisplacementField) -> Image2D {
    let (h, w) = img.shape();
    assert_eq!((field.height, field.width), (h, w), "field/image shape");
    let mut out = Image2D::from_fn(h, w, |y, x| {
        let i = y * w + x;
        sample_bilinear(img, y as f32 + field.dy[i], x as f32 + field.dx[i])
    });
    out.spacing = img.spacing;
    out
}

pub fn warp_mask(mask: &BinaryMask2D, field: &DisplacementField) -> BinaryMask2D {
    let (h, w) = mask.shape();
    assert_eq!((field.height, field.width), (h, w), "field/mask shape");
    BinaryMask2D::from_fn(h, w, |y, x| {
        let i = y * w + x;
        let sy = (y as f32 + field.dy[i]).round().clamp(0.0, (h - 1) as f32) as usize;
        let sx = (x as f32 + field.dx[i]).round().clamp(0.0, (w - 1) as f32) as usize;
        mask.get(sy, sx)
    })
}

fn disk_offsets(radius: usize) -> Vec<(isize, isize)> {
    let r = radius as isize;
    let mut v = Vec::new();
    for dy in -r..=r {
        for dx in -r..=r {
            if dy * dy + dx * dx <= r * r {
                v.push((dy, dx));
            }
        }
    }
    v
}

pub fn dilate(mask: &BinaryMask2D, radius: usize) -> BinaryMask2D {
    if radius == 0 {
        return mask.clone();
    }
    let (h, w) = mask.shape();
    let offs = disk_offsets(radius);
    let mut out = BinaryMask2D::empty(h, w);
    for (y, x) in mask.points() {
        for &(dy, dx) in &offs {
            let (ny, nx) = (y as isize + dy, x as isize + dx);
            if ny >= 0 && nx >= 0 && (ny as usize) < h && (nx as usize) < w {
                out.set(ny as usize, nx as usize, true);
            }
        }
    }
    out
}

/// Erosion with a disk; pixels outside the image count as background.
pub fn erode(mask: &BinaryMask2D, radius: usize) -> BinaryMask2D {
    if radius == 0 {
        return mask.clone();
    }
    let (h, w) = mask.shape();
    let offs = disk_offsets(radius);
    BinaryMask2D::from_fn(h, w, |y, x| {
        mask.get(y, x)
            && offs.iter().all(|&(dy, dx)| {
                let (ny, nx) = (y as isize + dy, x as isize + dx);
                ny >= 0
                    && nx >= 0
                    && (ny as usize) < h
                    && (nx as usize) < w
                    && mask.get(ny as usize, nx as usize)
            })
    })
}

/// Morphological closing; the image is padded so borders do not erode the result.
pub fn close(mask: &BinaryMask2D, radius: usize) -> BinaryMask2D {
    if radius == 0 {
        return mask.clone();
    }
    let (h, w) = mask.shape();
    let pad = radius;
    let padded = BinaryMask2D::from_fn(h + 2 * pad, w + 2 * pad, |y, x| {
        y >= pad && x >= pad && y < h + pad && x < w + pad && mask.get(y - pad, x - pad)
    });
    let closed = erode(&dilate(&padded, radius), radius);
    BinaryMask2D::from_fn(h, w, |y, x| closed.get(y + pad, x + pad))
}

/// 8-connected components, each as a list of flat pixel indices.
pub fn connected_components(mask: &BinaryMask2D) -> Vec<Vec<usize>> {
    let (h, w) = mask.shape();
    let mut seen = vec![false; h * w];
    let mut comps = Vec::new();
    for start in 0..h * w {
        if seen[start] || mask.pixels()[start] == 0 {
            continue;
        }
        let mut comp = Vec::new();
        let mut stack = vec![start];
        seen[start] = true;
        while let Some(i) = stack.pop() {
            comp.push(i);
            let (y, x) = ((i / w) as isize, (i % w) as isize);
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let (ny, nx) = (y + dy, x + dx);
                    if ny < 0 || nx < 0 || ny >= h as isize || nx >= w as isize {
                        continue;
                    }
                    let j = ny as usize * w + nx as usize;
                    if !seen[j] && mask.pixels()[j] == 1 {
                        seen[j] = true;
                        stack.push(j);
                    }
                }
            }
        }
        comp.sort_unstable();
        comps.push(comp);
    }
    comps
}

/// Drops 8-connected components smaller than `min_px` pixels.
pub fn remove_small_components(mask: &BinaryMask2D, min_px: usize) -> BinaryMask2D {
    let (h, w) = mask.shape();
    let mut out = BinaryMask2D::empty(h, w);
    for comp in connected_components(mask) {
        if comp.len() >= min_px {
            for i in comp {
                out.set(i / w, i % w, true);
            }
        }
    }
    out
}

/// Pixels of `mask` with at least one 4-neighbour outside the mask or the image.
pub fn boundary(mask: &BinaryMask2D) -> BinaryMask2D {
    let (h, w) = mask.shape();
    BinaryMask2D::from_fn(h, w, |y, x| {
        if !mask.get(y, x) {
            return false;
        }
        y == 0
            || x == 0
            || y + 1 == h
            || x + 1 == w
            || !mask.get(y - 1, x)
            || !mask.get(y + 1, x)
            || !mask.get(y, x - 1)
            || !mask.get(y, x + 1)
    })
}

/// 1-D squared distance transform of a sampled function (lower envelope of parabolas).
fn edt_1d(f: &[f64], out: &mut [f64]) {
    let n = f.len();
    let mut v = vec![0usize; n];
    let mut z = vec![0f64; n + 1];
    let mut k = 0usize;
    let mut first = None;
    for (q, &fq) in f.iter().enumerate() {
        if fq.is_finite() {
            first = Some(q);
            break;
        }
    }
    let Some(first) = first else {
        out.iter_mut().for_each(|o| *o = f64::INFINITY);
        return;
    };
    v[0] = first;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for q in first + 1..n {
        if !f[q].is_finite() {
            continue;
        }
        loop {
            let p = v[k];
            let s = ((f[q] + (q * q) as f64) - (f[p] + (p * p) as f64)) / (2.0 * (q - p) as f64);
            if s <= z[k] {
                if k == 0 {
                    v[0] = q;
                    z[0] = f64::NEG_INFINITY;
                    z[1] = f64::INFINITY;
                    break;
                }
                k -= 1;
                continue;
            }
            k += 1;
            v[k] = q;
            z[k] = s;
            z[k + 1] = f64::INFINITY;
            break;
        }
    }
    k = 0;
    for (q, o) in out.iter_mut().enumerate() {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let d = q as f64 - v[k] as f64;
        *o = d * d + f[v[k]];
    }
}

/// Exact squared Euclidean distance from every pixel to the nearest set pixel.
///
/// Returns `f64::INFINITY` everywhere when the mask is empty.
pub fn squared_distance_transform(mask: &BinaryMask2D) -> Vec<f64> {
    let (h, w) = mask.shape();
    let mut g = vec![0f64; h * w];
    let mut col = vec![0f64; h];
    let mut col_out = vec![0f64; h];
    for x in 0..w {
        for y in 0..h {
            col[y] = if mask.get(y, x) { 0.0 } else { f64::INFINITY };
        }
        edt_1d(&col, &mut col_out);
        for y in 0..h {
            g[y * w + x] = col_out[y];
        }
    }
    let mut out = vec![0f64; h * w];
    let mut row_out = vec![0f64; w];
    for y in 0..h {
        edt_1d(&g[y * w..(y + 1) * w], &mut row_out);
        out[y * w..(y + 1) * w].copy_from_slice(&row_out);
    }
    out
}
