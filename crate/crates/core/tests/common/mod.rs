#![allow(dead_code)]

use lesionforge::data::BinaryMask2D;
use rand::Rng;

/// Dice by direct set arithmetic over coordinate lists.
pub fn dice_brute(a: &BinaryMask2D, b: &BinaryMask2D) -> f64 {
    let pa = a.points();
    let pb = b.points();
    if pa.is_empty() && pb.is_empty() {
        return 1.0;
    }
    let inter = pa.iter().filter(|p| pb.contains(p)).count();
    2.0 * inter as f64 / (pa.len() + pb.len()) as f64
}

fn on(m: &BinaryMask2D, y: isize, x: isize) -> bool {
    let (h, w) = m.shape();
    y >= 0 && x >= 0 && (y as usize) < h && (x as usize) < w && m.get(y as usize, x as usize)
}

/// Set pixels with a 4-neighbour that is unset or off the grid.
pub fn boundary_brute(m: &BinaryMask2D) -> Vec<(usize, usize)> {
    m.points()
        .into_iter()
        .filter(|&(y, x)| {
            let (y, x) = (y as isize, x as isize);
            [(-1, 0), (1, 0), (0, -1), (0, 1)]
                .iter()
                .any(|(dy, dx)| !on(m, y + dy, x + dx))
        })
        .collect()
}

fn directed_brute(from: &[(usize, usize)], to: &[(usize, usize)], p: f64) -> f64 {
    let mut d: Vec<f64> = from
        .iter()
        .map(|&(y, x)| {
            to.iter()
                .map(|&(v, u)| {
                    let dy = y as f64 - v as f64;
                    let dx = x as f64 - u as f64;
                    (dy * dy + dx * dx).sqrt()
                })
                .fold(f64::INFINITY, f64::min)
        })
        .collect();
    d.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let k = ((p / 100.0) * d.len() as f64).ceil().max(1.0) as usize;
    d[k.min(d.len()) - 1]
}

/// All-pairs boundary distances, nearest-rank percentile, max of both directions.
pub fn hausdorff_brute(a: &BinaryMask2D, b: &BinaryMask2D, p: f64) -> Option<f64> {
    if a.is_empty() || b.is_empty() {
        return None;
    }
    let ba = boundary_brute(a);
    let bb = boundary_brute(b);
    Some(directed_brute(&ba, &bb, p).max(directed_brute(&bb, &ba, p)))
}

pub fn random_mask(rng: &mut impl Rng, h: usize, w: usize) -> BinaryMask2D {
    let density: f64 = rng.random_range(0.0..1.0);
    BinaryMask2D::from_fn(h, w, |_, _| rng.random_bool(density))
}

pub fn blob_mask(rng: &mut impl Rng, h: usize, w: usize) -> BinaryMask2D {
    let cy = rng.random_range(0.0..h as f64);
    let cx = rng.random_range(0.0..w as f64);
    let r = rng.random_range(0.5..=(h.max(w) as f64 / 2.0 + 0.5));
    BinaryMask2D::from_fn(h, w, |y, x| (y as f64 - cy).powi(2) + (x as f64 - cx).powi(2) <= r * r)
}

/// Hand-picked pairs: empties, full grids, single pixels, borders, stripes.
pub fn edge_cases() -> Vec<(BinaryMask2D, BinaryMask2D)> {
    let mut v = Vec::new();
    for &(h, w) in &[(1, 1), (1, 7), (5, 1), (4, 4), (16, 16), (9, 13)] {
        let empty = BinaryMask2D::empty(h, w);
        let full = BinaryMask2D::from_fn(h, w, |_, _| true);
        let corner = BinaryMask2D::from_fn(h, w, |y, x| y == 0 && x == 0);
        let far = BinaryMask2D::from_fn(h, w, |y, x| y == h - 1 && x == w - 1);
        let check = BinaryMask2D::from_fn(h, w, |y, x| (y + x) % 2 == 0);
        let stripe = BinaryMask2D::from_fn(h, w, |_, x| x % 3 == 0);
        let frame = BinaryMask2D::from_fn(h, w, |y, x| y == 0 || x == 0 || y == h - 1 || x == w - 1);
        let all = [&empty, &full, &corner, &far, &check, &stripe, &frame];
        for a in all {
            for b in all {
                v.push((a.clone(), b.clone()));
            }
        }
    }
    let p = BinaryMask2D::from_fn(5, 5, |y, x| y == 0 && x == 0);
    let q = BinaryMask2D::from_fn(5, 5, |y, x| y == 3 && x == 4);
    v.push((p, q));
    v
}
