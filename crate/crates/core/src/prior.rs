//! Fallback initial pseudo-labels from depth alone.

use crate::field::{minmax_normalize, ScalarField};

/// Center prior times normalized depth contrast, min-max normalized.
///
/// The center prior is an isotropic Gaussian with σ = 0.3·min(H, W) at the
/// image center; contrast is `|d − mean(d)|`. When the contrast is constant
/// (uniform depth) it carries no information and is taken as 1, leaving the
/// center prior alone.
pub fn simple_depth_prior_init(d: &ScalarField) -> ScalarField {
    let (w, h) = d.dims();
    let mean = d.mean();
    let contrast = d.map(|v| (v - mean).abs());
    let contrast = if contrast.max() > contrast.min() {
        minmax_normalize(&contrast)
    } else {
        ScalarField::filled(w, h, 1.0)
    };
    let sigma = 0.3 * w.min(h) as f32;
    let (cx, cy) = ((w as f32 - 1.0) / 2.0, (h as f32 - 1.0) / 2.0);
    let prior = ScalarField::from_fn(w, h, |x, y| {
        let (dx, dy) = (x as f32 - cx, y as f32 - cy);
        libm::expf(-(dx * dx + dy * dy) / (2.0 * sigma * sigma))
    });
    let product = prior
        .zip_map(&contrast, |a, b| a * b)
        .expect("fields built with the same dimensions");
    minmax_normalize(&product)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeedTree;
    use proptest::prelude::*;
    use rand::Rng as _;

    #[test]
    fn uniform_depth_gives_center_prior() {
        let out = simple_depth_prior_init(&ScalarField::filled(9, 7, 0.4));
        let sigma = 0.3 * 7.0f64;
        let g = |x: usize, y: usize| {
            let (dx, dy) = (x as f64 - 4.0, y as f64 - 3.0);
            (-(dx * dx + dy * dy) / (2.0 * sigma * sigma)).exp()
        };
        let (lo, hi) = (g(0, 0), g(4, 3));
        for y in 0..7 {
            for x in 0..9 {
                let want = (g(x, y) - lo) / (hi - lo);
                assert!((f64::from(out.get(x, y)) - want).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn centered_blob_wins() {
        let d = ScalarField::from_fn(32, 32, |x, y| {
            let (dx, dy) = (x as f32 - 15.5, y as f32 - 15.5);
            if dx * dx + dy * dy < 36.0 {
                0.9
            } else {
                0.2
            }
        });
        let out = simple_depth_prior_init(&d);
        let (i, _) = out
            .data()
            .iter()
            .enumerate()
            .fold((0, f32::MIN), |b, (i, &v)| if v > b.1 { (i, v) } else { b });
        assert_eq!(d.data()[i], 0.9);
    }

    proptest! {
        #[test]
        fn unit_range(seed in any::<u64>(), w in 1usize..20, h in 1usize..20) {
            let mut rng = SeedTree::new(seed).stream("d");
            let d = ScalarField::from_fn(w, h, |_, _| rng.random_range(0.0f32..1.0));
            let out = simple_depth_prior_init(&d);
            prop_assert!(out.data().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }
}
