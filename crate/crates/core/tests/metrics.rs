mod common;

use common::{blob_mask, dice_brute, edge_cases, hausdorff_brute, random_mask};
use lesionforge::data::{BinaryMask2D, Image2D};
use lesionforge::eval::{
    accumulate_heatmap, dice, hausdorff, heatmap_correlation, ventricle_area_delta,
    DEFAULT_CSF_THRESHOLD,
};
use lesionforge::phantom::{enlarge_ventricles, gen_healthy, PhantomSpec};
use lesionforge::rng::rng_for;
use proptest::prelude::*;
use rand::seq::SliceRandom;

#[test]
fn dice_examples() {
    let a = BinaryMask2D::from_fn(4, 4, |y, x| y == 0 && x < 4);
    let b = BinaryMask2D::from_fn(4, 4, |y, x| (y == 0 && x < 3) || (y == 1 && x < 3));
    assert_eq!((a.count(), b.count()), (4, 6));
    assert_eq!(dice(&a, &b).unwrap(), 0.6);
    assert_eq!(dice(&a, &a).unwrap(), 1.0);
    let c = BinaryMask2D::from_fn(4, 4, |y, _| y == 3);
    assert_eq!(dice(&a, &c).unwrap(), 0.0);
    let e = BinaryMask2D::empty(4, 4);
    assert_eq!(dice(&e, &e).unwrap(), 1.0);
    assert_eq!(dice(&a, &e).unwrap(), 0.0);
    assert!(dice(&a, &BinaryMask2D::empty(3, 4)).is_err());
}

#[test]
fn hausdorff_examples() {
    let p = BinaryMask2D::from_fn(6, 6, |y, x| y == 0 && x == 0);
    let q = BinaryMask2D::from_fn(6, 6, |y, x| y == 3 && x == 4);
    assert_eq!(hausdorff(&p, &q, 100.0).unwrap(), Some(5.0));
    assert_eq!(hausdorff(&p, &q, 95.0).unwrap(), Some(5.0));
    assert_eq!(hausdorff(&q, &q, 100.0).unwrap(), Some(0.0));
    assert_eq!(hausdorff(&p, &BinaryMask2D::empty(6, 6), 95.0).unwrap(), None);
    assert!(hausdorff(&p, &q, 0.0).is_err());
}

#[test]
fn metrics_match_brute_force_on_random_corpus() {
    let mut rng = rng_for(11, &[]);
    let mut pairs = edge_cases();
    for i in 0..600 {
        let h = rng.random_range(1..=16);
        let w = rng.random_range(1..=16);
        let (a, b) = if i % 2 == 0 {
            (random_mask(&mut rng, h, w), random_mask(&mut rng, h, w))
        } else {
            (blob_mask(&mut rng, h, w), blob_mask(&mut rng, h, w))
        };
        pairs.push((a, b));
    }
    for (a, b) in &pairs {
        assert_eq!(dice(a, b).unwrap(), dice_brute(a, b));
        for p in [95.0, 100.0, 50.0] {
            assert_eq!(hausdorff(a, b, p).unwrap(), hausdorff_brute(a, b, p), "{a:?} {b:?} p{p}");
        }
    }
}

#[test]
fn metrics_match_brute_force_on_all_3x3_pairs() {
    let masks: Vec<BinaryMask2D> = (0u32..512)
        .map(|bits| BinaryMask2D::from_fn(3, 3, |y, x| bits >> (y * 3 + x) & 1 == 1))
        .collect();
    for a in &masks {
        for b in &masks {
            assert_eq!(dice(a, b).unwrap(), dice_brute(a, b));
            assert_eq!(hausdorff(a, b, 100.0).unwrap(), hausdorff_brute(a, b, 100.0));
        }
    }
}

use rand::Rng;

fn mask_strategy() -> impl Strategy<Value = (BinaryMask2D, BinaryMask2D)> {
    (1usize..=12, 1usize..=12).prop_flat_map(|(h, w)| {
        (
            proptest::collection::vec(any::<bool>(), h * w),
            proptest::collection::vec(any::<bool>(), h * w),
        )
            .prop_map(move |(a, b)| (BinaryMask2D::from_bools(h, w, &a), BinaryMask2D::from_bools(h, w, &b)))
    })
}

proptest! {
    #[test]
    fn dice_and_hausdorff_are_symmetric_and_mirror_invariant((a, b) in mask_strategy()) {
        prop_assert_eq!(dice(&a, &b).unwrap(), dice(&b, &a).unwrap());
        prop_assert_eq!(dice(&a, &b).unwrap(), dice(&a.mirrored(), &b.mirrored()).unwrap());
        let d = dice(&a, &b).unwrap();
        prop_assert!((0.0..=1.0).contains(&d));
        for p in [95.0, 100.0] {
            let h = hausdorff(&a, &b, p).unwrap();
            prop_assert_eq!(h, hausdorff(&b, &a, p).unwrap());
            prop_assert_eq!(h, hausdorff(&a.mirrored(), &b.mirrored(), p).unwrap());
        }
        prop_assert!(hausdorff(&a, &b, 95.0).unwrap() <= hausdorff(&a, &b, 100.0).unwrap());
    }

    #[test]
    fn heatmap_of_identical_masks_is_the_mask((a, _) in mask_strategy(), n in 1usize..5) {
        let masks = vec![a.clone(); n];
        let h = accumulate_heatmap(&masks).unwrap();
        let expected: Vec<f64> = a.pixels().iter().map(|&p| p as f64).collect();
        prop_assert_eq!(h.values, expected);
        prop_assert_eq!(h.count, n);
    }
}

#[test]
fn heatmap_examples() {
    let a = BinaryMask2D::from_fn(4, 4, |y, _| y < 2);
    let b = a.complement();
    let h = accumulate_heatmap([&a, &b]).unwrap();
    assert!(h.values.iter().all(|&v| v == 0.5));
    assert!(accumulate_heatmap(std::iter::empty()).is_err());
    assert_eq!(accumulate_heatmap([&a]).unwrap().values.iter().sum::<f64>(), 8.0);
}

#[test]
fn heatmap_correlation_examples() {
    let mut rng = rng_for(4, &[]);
    let h: Vec<f64> = (0..400).map(|_| rng.random_range(0.0..1.0)).collect();
    let region = BinaryMask2D::from_fn(20, 20, |_, _| true);
    assert!((heatmap_correlation(&h, &h, &region).unwrap() - 1.0).abs() < 1e-12);
    let neg: Vec<f64> = h.iter().map(|v| 2.0 - v).collect();
    assert!((heatmap_correlation(&h, &neg, &region).unwrap() + 1.0).abs() < 1e-12);
    let mut shuffled = h.clone();
    shuffled.shuffle(&mut rng);
    assert!(heatmap_correlation(&h, &shuffled, &region).unwrap().abs() < 0.2);
    assert!(heatmap_correlation(&h, &vec![0.3; 400], &region).is_err());
}

#[test]
fn ventricle_delta_examples() {
    let spec = PhantomSpec::default();
    let h = gen_healthy(&spec, 2).unwrap();
    let t = DEFAULT_CSF_THRESHOLD;
    assert_eq!(ventricle_area_delta(&h.image, &h.image, &h.brain, t).unwrap(), 0);
    let floor = Image2D::filled(64, 64, -2.0);
    assert_eq!(ventricle_area_delta(&h.image, &h.image, &h.brain, -1.5).unwrap(), 0);
    assert!(ventricle_area_delta(&floor, &h.image, &h.brain, t).unwrap() < 0);
    let mut total_err = 0.0;
    for idx in 0..10 {
        let h = gen_healthy(&spec, idx).unwrap();
        let (enlarged, vent) = enlarge_ventricles(&h, &spec, idx);
        let constructed = vent.count() as f64 - h.ventricle.count() as f64;
        let delta = ventricle_area_delta(&h.image, &enlarged, &h.brain, t).unwrap() as f64;
        assert!(delta > 0.0);
        total_err += ((delta - constructed) / constructed).abs();
    }
    assert!(total_err / 10.0 <= 0.15, "mean relative error {}", total_err / 10.0);
}
