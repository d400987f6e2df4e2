//! Salient-object evaluation metrics: MAE, F-measure curve, E-measure and
//! weighted F-measure.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::field::ScalarField;

/// β² of the thresholded F-measure.
pub const BETA2: f64 = 0.3;
/// β² of the weighted F-measure.
pub const BETA2_WEIGHTED: f64 = 1.0;
pub const THRESHOLDS: usize = 256;

/// Mean absolute difference.
pub fn mae(s: &ScalarField, g: &ScalarField) -> Result<f64> {
    s.check_dims(g)?;
    let sum: f64 = s
        .data()
        .iter()
        .zip(g.data())
        .map(|(&a, &b)| (f64::from(a) - f64::from(b)).abs())
        .sum();
    Ok(sum / s.len() as f64)
}

/// Ground truth as exact booleans; rejects anything not within 1e-6 of {0, 1}.
fn gt_mask(g: &ScalarField) -> Result<Vec<bool>> {
    if !g.is_binary(1e-6) {
        return Err(Error::OutOfRange("ground truth must be binary".into()));
    }
    Ok(g.data().iter().map(|&v| v > 0.5).collect())
}

/// F_β from confusion counts, with zero conventions for empty sets.
pub fn f_beta(tp: u64, fp: u64, fn_: u64, beta2: f64) -> f64 {
    let p = if tp + fp == 0 {
        0.0
    } else {
        tp as f64 / (tp + fp) as f64
    };
    let r = if tp + fn_ == 0 {
        0.0
    } else {
        tp as f64 / (tp + fn_) as f64
    };
    if p == 0.0 && r == 0.0 {
        return 0.0;
    }
    (1.0 + beta2) * p * r / (beta2 * p + r)
}

/// Threshold `k/255` for curve index `k`.
pub fn threshold(k: usize) -> f32 {
    k as f32 / 255.0
}

/// F_β (β² = 0.3) after binarizing `s > k/255`, for every `k` in 0..=255.
pub fn f_measure_curve(s: &ScalarField, g: &ScalarField) -> Result<Vec<f64>> {
    s.check_dims(g)?;
    let mask = gt_mask(g)?;
    let mut fg: Vec<f32> = Vec::new();
    let mut bg: Vec<f32> = Vec::new();
    for (&v, &m) in s.data().iter().zip(&mask) {
        if m {
            fg.push(v)
        } else {
            bg.push(v)
        }
    }
    fg.sort_by(f32::total_cmp);
    bg.sort_by(f32::total_cmp);
    let above =
        |sorted: &[f32], t: f32| (sorted.len() - sorted.partition_point(|&v| v <= t)) as u64;
    Ok((0..THRESHOLDS)
        .map(|k| {
            let t = threshold(k);
            let tp = above(&fg, t);
            let fp = above(&bg, t);
            f_beta(tp, fp, fg.len() as u64 - tp, BETA2)
        })
        .collect())
}

/// Enhanced-alignment measure. The prediction is binarized at
/// `min(2·mean(s), 1)`; an all-zero prediction stays all-zero.
pub fn e_measure(s: &ScalarField, g: &ScalarField) -> Result<f64> {
    s.check_dims(g)?;
    let mask = gt_mask(g)?;
    let n = s.len() as f64;
    let mean_s = s.data().iter().map(|&v| f64::from(v)).sum::<f64>() / n;
    let th = (2.0 * mean_s).min(1.0);
    let fm: Vec<f64> = s
        .data()
        .iter()
        .map(|&v| {
            if mean_s > 0.0 && f64::from(v) >= th {
                1.0
            } else {
                0.0
            }
        })
        .collect();
    let gd: Vec<f64> = mask.iter().map(|&m| if m { 1.0 } else { 0.0 }).collect();
    let fg_count = mask.iter().filter(|&&m| m).count();
    let enhanced: Vec<f64> = if fg_count == 0 {
        fm.iter().map(|v| 1.0 - v).collect()
    } else if fg_count == mask.len() {
        fm.clone()
    } else {
        let mf = fm.iter().sum::<f64>() / n;
        let mg = gd.iter().sum::<f64>() / n;
        fm.iter()
            .zip(&gd)
            .map(|(&a, &b)| {
                let (pa, pb) = (a - mf, b - mg);
                let xi = 2.0 * pa * pb / (pa * pa + pb * pb);
                (1.0 + xi) * (1.0 + xi) / 4.0
            })
            .collect()
    };
    Ok(enhanced.iter().sum::<f64>() / n)
}

/// One-dimensional squared distance transform of a sampled function
/// (lower envelope of parabolas).
fn dt1d(f: &[f64]) -> Vec<f64> {
    let n = f.len();
    let mut d = vec![0.0; n];
    let mut v = vec![0usize; n];
    let mut z = vec![0.0f64; n + 1];
    let mut k = 0usize;
    let mut started = false;
    for q in 0..n {
        if !f[q].is_finite() {
            continue;
        }
        if !started {
            v[0] = q;
            z[0] = f64::NEG_INFINITY;
            z[1] = f64::INFINITY;
            started = true;
            continue;
        }
        loop {
            let p = v[k];
            let s = ((f[q] + (q * q) as f64) - (f[p] + (p * p) as f64)) / (2.0 * (q - p) as f64);
            if s <= z[k] && k > 0 {
                k -= 1;
            } else {
                k += 1;
                v[k] = q;
                z[k] = s;
                z[k + 1] = f64::INFINITY;
                break;
            }
        }
    }
    if !started {
        return vec![f64::INFINITY; n];
    }
    k = 0;
    for (q, dq) in d.iter_mut().enumerate() {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let p = v[k];
        let diff = q as f64 - p as f64;
        *dq = diff * diff + f[p];
    }
    d
}

/// Squared Euclidean distance from each pixel to the nearest foreground pixel.
fn squared_edt(mask: &[bool], w: usize, h: usize) -> Vec<f64> {
    let mut cols = vec![0.0; w * h];
    for x in 0..w {
        let f: Vec<f64> = (0..h)
            .map(|y| if mask[y * w + x] { 0.0 } else { f64::INFINITY })
            .collect();
        for (y, v) in dt1d(&f).into_iter().enumerate() {
            cols[y * w + x] = v;
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        let row = dt1d(&cols[y * w..(y + 1) * w]);
        out[y * w..(y + 1) * w].copy_from_slice(&row);
    }
    out
}

/// Distance to, and row-major index of, the nearest foreground pixel; ties
/// go to the smallest index.
fn nearest_foreground(mask: &[bool], w: usize, h: usize) -> (Vec<f64>, Vec<usize>) {
    let d2 = squared_edt(mask, w, h);
    let mut idx = vec![0usize; w * h];
    for i in 0..w * h {
        if mask[i] {
            idx[i] = i;
            continue;
        }
        let target = d2[i];
        let r = libm::sqrt(target) as usize;
        let (x, y) = (i % w, i / w);
        let mut best = usize::MAX;
        'rows: for yy in y.saturating_sub(r)..=(y + r).min(h - 1) {
            for xx in x.saturating_sub(r)..=(x + r).min(w - 1) {
                let j = yy * w + xx;
                if mask[j] {
                    let dx = xx as f64 - x as f64;
                    let dy = yy as f64 - y as f64;
                    if dx * dx + dy * dy == target {
                        best = j;
                        break 'rows;
                    }
                }
            }
        }
        idx[i] = best;
    }
    (d2.into_iter().map(libm::sqrt).collect(), idx)
}

/// 7×7 Gaussian with σ = 5, normalized to sum 1.
fn dependency_kernel() -> [[f64; 7]; 7] {
    let mut k = [[0.0; 7]; 7];
    let mut z = 0.0;
    for (i, row) in k.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            let (dy, dx) = (i as f64 - 3.0, j as f64 - 3.0);
            *v = libm::exp(-(dx * dx + dy * dy) / 50.0);
            z += *v;
        }
    }
    for row in k.iter_mut() {
        for v in row.iter_mut() {
            *v /= z;
        }
    }
    k
}

/// Weighted F-measure (β² = 1). Zero when the ground truth is empty.
pub fn weighted_f(s: &ScalarField, g: &ScalarField) -> Result<f64> {
    s.check_dims(g)?;
    let mask = gt_mask(g)?;
    let (w, h) = s.dims();
    let fg_count = mask.iter().filter(|&&m| m).count();
    if fg_count == 0 {
        return Ok(0.0);
    }
    let e: Vec<f64> = s
        .data()
        .iter()
        .zip(&mask)
        .map(|(&v, &m)| (f64::from(v) - if m { 1.0 } else { 0.0 }).abs())
        .collect();
    let (dist, nearest) = nearest_foreground(&mask, w, h);
    // Background pixels inherit the error of their nearest foreground pixel.
    let et: Vec<f64> = (0..w * h)
        .map(|i| if mask[i] { e[i] } else { e[nearest[i]] })
        .collect();
    let k = dependency_kernel();
    let mut ea = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (i, row) in k.iter().enumerate() {
                let yy = y as isize + i as isize - 3;
                if yy < 0 || yy as usize >= h {
                    continue;
                }
                for (j, kv) in row.iter().enumerate() {
                    let xx = x as isize + j as isize - 3;
                    if xx >= 0 && (xx as usize) < w {
                        acc += kv * et[yy as usize * w + xx as usize];
                    }
                }
            }
            ea[y * w + x] = acc;
        }
    }
    let decay = libm::log(0.5) / 5.0;
    let (mut ew_fg, mut ew_bg) = (0.0, 0.0);
    for i in 0..w * h {
        if mask[i] {
            ew_fg += e[i].min(ea[i]);
        } else {
            ew_bg += e[i] * (2.0 - libm::exp(decay * dist[i]));
        }
    }
    let tp = fg_count as f64 - ew_fg;
    let recall = 1.0 - ew_fg / fg_count as f64;
    let precision = if tp + ew_bg > 0.0 {
        tp / (tp + ew_bg)
    } else {
        0.0
    };
    let denom = BETA2_WEIGHTED * precision + recall;
    if denom <= 0.0 {
        return Ok(0.0);
    }
    Ok((1.0 + BETA2_WEIGHTED) * recall * precision / denom)
}

/// All metrics for one prediction, or their aggregate over a set.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub mae: f64,
    pub f_curve: Vec<f64>,
    pub f_max: f64,
    pub f_mean: f64,
    pub f_weighted: f64,
    pub e_measure: f64,
}

impl MetricsReport {
    fn from_parts(mae: f64, f_curve: Vec<f64>, f_weighted: f64, e_measure: f64) -> Self {
        let f_max = f_curve.iter().copied().fold(0.0, f64::max);
        let f_mean = f_curve.iter().sum::<f64>() / f_curve.len() as f64;
        Self {
            mae,
            f_curve,
            f_max,
            f_mean,
            f_weighted,
            e_measure,
        }
    }

    /// Dataset aggregate: every field averaged over images, with `f_max`
    /// and `f_mean` taken from the mean curve.
    pub fn mean(reports: &[MetricsReport]) -> Result<Self> {
        if reports.is_empty() {
            return Err(Error::InvalidParameter("no reports to aggregate".into()));
        }
        let n = reports.len() as f64;
        let avg = |f: &dyn Fn(&MetricsReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
        let curve = (0..THRESHOLDS)
            .map(|k| reports.iter().map(|r| r.f_curve[k]).sum::<f64>() / n)
            .collect();
        Ok(Self::from_parts(
            avg(&|r| r.mae),
            curve,
            avg(&|r| r.f_weighted),
            avg(&|r| r.e_measure),
        ))
    }
}

pub fn evaluate(s: &ScalarField, g: &ScalarField) -> Result<MetricsReport> {
    Ok(MetricsReport::from_parts(
        mae(s, g)?,
        f_measure_curve(s, g)?,
        weighted_f(s, g)?,
        e_measure(s, g)?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeedTree;
    use proptest::prelude::*;
    use rand::Rng as _;

    fn random_pair(seed: u64, w: usize, h: usize) -> (ScalarField, ScalarField) {
        let mut rng = SeedTree::new(seed).stream("pair");
        let s = ScalarField::from_fn(w, h, |_, _| rng.random_range(0.0f32..1.0));
        let g = ScalarField::from_fn(w, h, |_, _| if rng.random_bool(0.4) { 1.0 } else { 0.0 });
        (s, g)
    }

    #[test]
    fn mae_examples() {
        let (s, g) = random_pair(1, 8, 8);
        assert_eq!(mae(&s, &s).unwrap(), 0.0);
        assert_eq!(
            mae(&ScalarField::filled(8, 8, 1.0), &ScalarField::zeros(8, 8)).unwrap(),
            1.0
        );
        let mut acc = 0.0f64;
        for y in 0..8 {
            for x in 0..8 {
                acc += (f64::from(s.get(x, y)) - f64::from(g.get(x, y))).abs();
            }
        }
        assert!((mae(&s, &g).unwrap() - acc / 64.0).abs() < 1e-7);
        assert!(mae(&s, &ScalarField::zeros(8, 7)).is_err());
    }

    #[test]
    fn f_curve_examples() {
        let (s, g) = random_pair(2, 8, 8);
        let perfect = f_measure_curve(&g, &g).unwrap();
        assert!(perfect[..255].iter().all(|&f| f == 1.0));
        assert_eq!(perfect[255], 0.0);
        // P = R = p gives F = p.
        assert!((f_beta(3, 1, 1, BETA2) - 0.75).abs() < 1e-15);
        let curve = f_measure_curve(&s, &g).unwrap();
        let k = 100;
        let t = threshold(k);
        let (mut tp, mut fp, mut fn_) = (0u64, 0u64, 0u64);
        for (&a, &b) in s.data().iter().zip(g.data()) {
            match (a > t, b == 1.0) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                _ => {}
            }
        }
        let p = tp as f64 / (tp + fp) as f64;
        let r = tp as f64 / (tp + fn_) as f64;
        assert!((curve[k] - 1.3 * p * r / (0.3 * p + r)).abs() < 1e-7);
        assert!(f_measure_curve(&s, &s).is_err());
    }

    #[test]
    fn e_measure_examples() {
        let (_, g) = random_pair(3, 8, 8);
        assert_eq!(e_measure(&g, &g).unwrap(), 1.0);
        assert_eq!(e_measure(&g.complement(), &g).unwrap(), 0.0);
        let empty = ScalarField::zeros(8, 8);
        assert_eq!(e_measure(&empty, &empty).unwrap(), 1.0);
        let full = ScalarField::filled(8, 8, 1.0);
        assert_eq!(e_measure(&full, &full).unwrap(), 1.0);
        assert_eq!(e_measure(&empty, &full).unwrap(), 0.0);
    }

    /// Brute-force nearest foreground pixel (smallest row-major index on ties).
    fn brute_nearest(mask: &[bool], w: usize, h: usize) -> (Vec<f64>, Vec<usize>) {
        let mut d = vec![0.0; w * h];
        let mut idx = vec![0; w * h];
        for i in 0..w * h {
            let mut best = (f64::INFINITY, usize::MAX);
            for j in 0..w * h {
                if mask[j] {
                    let dx = (i % w) as f64 - (j % w) as f64;
                    let dy = (i / w) as f64 - (j / w) as f64;
                    let dd = dx * dx + dy * dy;
                    if dd < best.0 {
                        best = (dd, j);
                    }
                }
            }
            d[i] = best.0.sqrt();
            idx[i] = best.1;
        }
        (d, idx)
    }

    /// Line-by-line transcription of the reference weighted-F definition.
    fn weighted_f_oracle(s: &ScalarField, g: &ScalarField) -> f64 {
        let (w, h) = s.dims();
        let gt: Vec<bool> = g.data().iter().map(|&v| v == 1.0).collect();
        if !gt.iter().any(|&b| b) {
            return 0.0;
        }
        let e: Vec<f64> = (0..w * h)
            .map(|i| (f64::from(s.data()[i]) - if gt[i] { 1.0 } else { 0.0 }).abs())
            .collect();
        let (dst, idxt) = brute_nearest(&gt, w, h);
        let mut et = e.clone();
        for i in 0..w * h {
            if !gt[i] {
                et[i] = et[idxt[i]];
            }
        }
        let mut kern = [[0.0; 7]; 7];
        let mut z = 0.0;
        for i in 0..7 {
            for j in 0..7 {
                let v =
                    (-(((i as f64 - 3.0).powi(2) + (j as f64 - 3.0).powi(2)) / (2.0 * 25.0))).exp();
                kern[i][j] = v;
                z += v;
            }
        }
        let mut ea = vec![0.0; w * h];
        for y in 0..h as isize {
            for x in 0..w as isize {
                let mut acc = 0.0;
                for i in -3..=3isize {
                    for j in -3..=3isize {
                        let (yy, xx) = (y + i, x + j);
                        if yy >= 0 && xx >= 0 && yy < h as isize && xx < w as isize {
                            acc += kern[(i + 3) as usize][(j + 3) as usize] / z
                                * et[(yy * w as isize + xx) as usize];
                        }
                    }
                }
                ea[(y * w as isize + x) as usize] = acc;
            }
        }
        let mut min_e_ea = e.clone();
        for i in 0..w * h {
            if gt[i] && ea[i] < e[i] {
                min_e_ea[i] = ea[i];
            }
        }
        let mut b = vec![1.0; w * h];
        for i in 0..w * h {
            if !gt[i] {
                b[i] = 2.0 - (0.5f64.ln() / 5.0 * dst[i]).exp();
            }
        }
        let ew: Vec<f64> = (0..w * h).map(|i| min_e_ea[i] * b[i]).collect();
        let n_fg = gt.iter().filter(|&&v| v).count() as f64;
        let sum_fg: f64 = (0..w * h).filter(|&i| gt[i]).map(|i| ew[i]).sum();
        let tpw = n_fg - sum_fg;
        let fpw: f64 = (0..w * h).filter(|&i| !gt[i]).map(|i| ew[i]).sum();
        let r = 1.0 - sum_fg / n_fg;
        let p = tpw / (tpw + fpw);
        2.0 * r * p / (r + p)
    }

    #[test]
    fn nearest_foreground_matches_brute_force() {
        for seed in 0..20 {
            let mut rng = SeedTree::new(seed).stream("nf");
            let (w, h) = (rng.random_range(1..12), rng.random_range(1..12));
            let p = rng.random_range(0.02..0.5);
            let mut mask: Vec<bool> = (0..w * h).map(|_| rng.random_bool(p)).collect();
            mask[rng.random_range(0..w * h)] = true;
            let (d, i) = nearest_foreground(&mask, w, h);
            let (bd, bi) = brute_nearest(&mask, w, h);
            assert_eq!(i, bi);
            for (a, b) in d.iter().zip(&bd) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn weighted_f_examples() {
        let (s, g) = random_pair(4, 8, 8);
        assert!((weighted_f(&g, &g).unwrap() - 1.0).abs() < 1e-12);
        let blob = ScalarField::from_fn(16, 16, |x, y| {
            if (5..11).contains(&x) && (5..11).contains(&y) {
                1.0
            } else {
                0.0
            }
        });
        assert_eq!(weighted_f(&ScalarField::zeros(16, 16), &blob).unwrap(), 0.0);
        assert_eq!(weighted_f(&s, &ScalarField::zeros(8, 8)).unwrap(), 0.0);
        assert!((weighted_f(&s, &g).unwrap() - weighted_f_oracle(&s, &g)).abs() < 1e-5);
    }

    #[test]
    fn aggregate_report() {
        let reports: Vec<MetricsReport> = (0..3)
            .map(|i| {
                let (s, g) = random_pair(10 + i, 8, 8);
                evaluate(&s, &g).unwrap()
            })
            .collect();
        let m = MetricsReport::mean(&reports).unwrap();
        assert_eq!(m.f_curve.len(), 256);
        assert_eq!(m.f_max, m.f_curve.iter().copied().fold(0.0, f64::max));
        assert!(m.f_max >= m.f_mean);
        assert!((m.mae - reports.iter().map(|r| r.mae).sum::<f64>() / 3.0).abs() < 1e-15);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]

        #[test]
        fn metric_oracles(seed in any::<u64>()) {
            let (s, g) = random_pair(seed, 8, 8);
            prop_assert!((weighted_f(&s, &g).unwrap() - weighted_f_oracle(&s, &g)).abs() < 1e-5);
            // E-measure pointwise oracle.
            let mean_s = s.data().iter().map(|&v| f64::from(v)).sum::<f64>() / 64.0;
            let th = (2.0 * mean_s).min(1.0);
            let fm: Vec<f64> = s.data().iter().map(|&v| if f64::from(v) >= th { 1.0 } else { 0.0 }).collect();
            let gd: Vec<f64> = g.data().iter().map(|&v| f64::from(v)).collect();
            let (mf, mg) = (fm.iter().sum::<f64>() / 64.0, gd.iter().sum::<f64>() / 64.0);
            let e = if mg == 0.0 {
                fm.iter().map(|v| 1.0 - v).sum::<f64>() / 64.0
            } else if mg == 1.0 {
                mf
            } else {
                (0..64).map(|i| {
                    let (a, b) = (fm[i] - mf, gd[i] - mg);
                    let xi = 2.0 * a * b / (a * a + b * b);
                    (1.0 + xi).powi(2) / 4.0
                }).sum::<f64>() / 64.0
            };
            prop_assert!((e_measure(&s, &g).unwrap() - e).abs() < 1e-6);
            let r = evaluate(&s, &g).unwrap();
            for v in [r.mae, r.f_max, r.f_mean, r.f_weighted, r.e_measure] {
                prop_assert!((0.0..=1.0).contains(&v));
            }
            prop_assert!(r.f_max >= r.f_mean);
        }

        #[test]
        fn mae_symmetries(seed in any::<u64>()) {
            let (s, g) = random_pair(seed, 8, 8);
            let a = mae(&s, &g).unwrap();
            prop_assert_eq!(a, mae(&g, &s).unwrap());
            prop_assert!((a - mae(&s.complement(), &g.complement()).unwrap()).abs() < 1e-7);
        }

        #[test]
        fn permutation_covariance(seed in any::<u64>()) {
            let (s, g) = random_pair(seed, 8, 8);
            let mut rng = SeedTree::new(seed).stream("perm");
            let mut perm: Vec<usize> = (0..64).collect();
            for i in (1..64).rev() {
                perm.swap(i, rng.random_range(0..=i));
            }
            let ps = ScalarField::new(8, 8, perm.iter().map(|&i| s.data()[i]).collect()).unwrap();
            let pg = ScalarField::new(8, 8, perm.iter().map(|&i| g.data()[i]).collect()).unwrap();
            prop_assert!((mae(&s, &g).unwrap() - mae(&ps, &pg).unwrap()).abs() < 1e-12);
            prop_assert_eq!(f_measure_curve(&s, &g).unwrap(), f_measure_curve(&ps, &pg).unwrap());
        }

        #[test]
        fn curve_piecewise_constant(seed in any::<u64>()) {
            let mut rng = SeedTree::new(seed).stream("q");
            let s = ScalarField::from_fn(8, 8, |_, _| (f32::from(rng.random_range(0u8..255)) + 0.25) / 255.0);
            let g = ScalarField::from_fn(8, 8, |_, _| if rng.random_bool(0.5) { 1.0 } else { 0.0 });
            // Stays strictly between the same pair of thresholds.
            let nudged = s.map(|v| v + 0.5 / 255.0);
            prop_assert_eq!(f_measure_curve(&s, &g).unwrap(), f_measure_curve(&nudged, &g).unwrap());
        }

        #[test]
        fn binary_prediction_fmax_is_confusion_value(seed in any::<u64>()) {
            let (_, g) = random_pair(seed, 8, 8);
            let (s, _) = random_pair(seed ^ 1, 8, 8);
            let sb = s.binarize(0.5);
            let (mut tp, mut fp, mut fn_) = (0, 0, 0);
            for (&a, &b) in sb.data().iter().zip(g.data()) {
                match (a == 1.0, b == 1.0) {
                    (true, true) => tp += 1,
                    (true, false) => fp += 1,
                    (false, true) => fn_ += 1,
                    _ => {}
                }
            }
            let r = evaluate(&sb, &g).unwrap();
            prop_assert!((r.f_max - f_beta(tp, fp, fn_, BETA2)).abs() < 1e-12);
        }
    }
}
