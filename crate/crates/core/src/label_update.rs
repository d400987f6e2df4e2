//! Depth-disentangled label update followed by dense-CRF refinement.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::disentangle::DepthSide;
use crate::error::{Error, Result};
use crate::field::{clamp_nonneg, minmax_normalize, RgbImage, ScalarField};
use crate::nn::loss::PROB_CLAMP;
use crate::nn::net::SaliencyNet;
use crate::nn::tensor::{axpy, dot, stack_rgb, unstack_channel};
use crate::nn::BnMode;

/// Pre-normalization field `max(sal + d_sal − d_nonsal, 0)`.
pub fn dlu_pre_normalize(
    sal_pred: &ScalarField,
    d_sal: &ScalarField,
    d_nonsal: &ScalarField,
) -> Result<ScalarField> {
    sal_pred.check_dims(d_sal)?;
    sal_pred.check_dims(d_nonsal)?;
    let s_temp = sal_pred
        .zip_map(d_sal, |a, b| a + b)?
        .zip_map(d_nonsal, |a, b| a - b)?;
    Ok(clamp_nonneg(&s_temp))
}

/// `minmax(max(sal + d_sal − d_nonsal, 0))`.
pub fn dlu_combine(
    sal_pred: &ScalarField,
    d_sal: &ScalarField,
    d_nonsal: &ScalarField,
) -> Result<ScalarField> {
    Ok(minmax_normalize(&dlu_pre_normalize(
        sal_pred, d_sal, d_nonsal,
    )?))
}

/// Largest side length accepted by exact (all-pairs) inference.
pub const CRF_MAX_SIDE: usize = 128;
/// Above this many pixels the pairwise kernel is evaluated on the fly
/// instead of being tabulated.
const TABULATE_LIMIT: usize = 4096;

/// Binary fully-connected CRF with appearance and smoothness kernels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CrfParams {
    pub w_app: f32,
    /// Spatial stddev of the appearance kernel, in pixels.
    pub theta_alpha: f32,
    /// Color stddev of the appearance kernel, on `[0, 1]` intensities.
    pub theta_beta: f32,
    pub w_smooth: f32,
    /// Spatial stddev of the smoothness kernel, in pixels.
    pub theta_gamma: f32,
    pub iterations: usize,
    /// Restrict messages to a `(2r+1)²` window. Approximate; lifts the size guard.
    pub window: Option<usize>,
}

impl Default for CrfParams {
    fn default() -> Self {
        Self {
            w_app: 4.0,
            theta_alpha: 8.0,
            theta_beta: 0.1,
            w_smooth: 3.0,
            theta_gamma: 3.0,
            iterations: 5,
            window: None,
        }
    }
}

impl CrfParams {
    pub fn validate(&self) -> Result<()> {
        let weights_ok = [self.w_app, self.w_smooth]
            .iter()
            .all(|w| w.is_finite() && *w >= 0.0);
        let stddevs_ok = [self.theta_alpha, self.theta_beta, self.theta_gamma]
            .iter()
            .all(|s| s.is_finite() && *s > 0.0);
        if !weights_ok || !stddevs_ok || self.iterations == 0 {
            return Err(Error::InvalidParameter(format!(
                "invalid CRF parameters {self:?}"
            )));
        }
        Ok(())
    }

    /// Pairwise affinity `k(i, j)` in f64.
    fn affinity(&self, d2: f64, c2: f64) -> f64 {
        let ta = f64::from(self.theta_alpha);
        let tb = f64::from(self.theta_beta);
        let tg = f64::from(self.theta_gamma);
        f64::from(self.w_app) * libm::exp(-d2 / (2.0 * ta * ta) - c2 / (2.0 * tb * tb))
            + f64::from(self.w_smooth) * libm::exp(-d2 / (2.0 * tg * tg))
    }
}

/// Foreground/background marginals of every pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct Marginals {
    pub fg: Vec<f64>,
    pub bg: Vec<f64>,
}

struct Pixels<'a> {
    w: usize,
    rgb: &'a RgbImage,
}

impl Pixels<'_> {
    fn dist2(&self, i: usize, j: usize) -> (f64, f64) {
        let (xi, yi) = ((i % self.w) as f64, (i / self.w) as f64);
        let (xj, yj) = ((j % self.w) as f64, (j / self.w) as f64);
        let d2 = (xi - xj) * (xi - xj) + (yi - yj) * (yi - yj);
        let mut c2 = 0.0;
        for c in 0..3 {
            let p = self.rgb.plane(c);
            let d = f64::from(p[i]) - f64::from(p[j]);
            c2 += d * d;
        }
        (d2, c2)
    }
}

/// How messages `m_i = Σ_{j≠i} k(i,j) q_j` are computed.
enum Messages {
    /// Packed upper triangle, row `i` holding `k(i, j)` for `j > i`.
    Table(Vec<f32>),
    OnTheFly,
    Window(usize),
}

impl Messages {
    fn new(p: &CrfParams, px: &Pixels<'_>, n: usize) -> Self {
        if let Some(r) = p.window {
            return Messages::Window(r);
        }
        if n > TABULATE_LIMIT {
            return Messages::OnTheFly;
        }
        // Spatial factors are separable over integer offsets, so only the
        // color term needs an exponential per pair.
        let w = px.w;
        let h = n / w;
        let side = w.max(h);
        let gauss = |theta: f32| -> Vec<f32> {
            let t = f64::from(theta);
            (0..side)
                .map(|d| libm::exp(-((d * d) as f64) / (2.0 * t * t)) as f32)
                .collect()
        };
        let (sa, sg) = (gauss(p.theta_alpha), gauss(p.theta_gamma));
        let inv_beta = 1.0 / (2.0 * p.theta_beta * p.theta_beta);
        let planes = [px.rgb.plane(0), px.rgb.plane(1), px.rgb.plane(2)];
        let mut table = Vec::with_capacity(n * (n - 1) / 2);
        for i in 0..n {
            let (xi, yi) = (i % w, i / w);
            let ci = [planes[0][i], planes[1][i], planes[2][i]];
            for j in i + 1..n {
                let (dx, dy) = ((j % w).abs_diff(xi), j / w - yi);
                let mut c2 = 0.0f32;
                for (c, plane) in ci.iter().zip(&planes) {
                    let d = c - plane[j];
                    c2 += d * d;
                }
                let app = p.w_app * sa[dx] * sa[dy] * libm::expf(-c2 * inv_beta);
                table.push(app + p.w_smooth * sg[dx] * sg[dy]);
            }
        }
        Messages::Table(table)
    }

    fn apply(&self, p: &CrfParams, px: &Pixels<'_>, q: &[f64], h: usize) -> Vec<f64> {
        let n = q.len();
        match self {
            Messages::Table(table) => {
                let qf: Vec<f32> = q.iter().map(|&v| v as f32).collect();
                let mut m = vec![0.0f32; n];
                let mut start = 0;
                for i in 0..n {
                    let row = &table[start..start + (n - i - 1)];
                    start += n - i - 1;
                    m[i] += dot(row, &qf[i + 1..]);
                    axpy(&mut m[i + 1..], qf[i], row);
                }
                m.into_iter().map(f64::from).collect()
            }
            Messages::OnTheFly => (0..n)
                .map(|i| {
                    (0..n)
                        .filter(|&j| j != i)
                        .map(|j| {
                            let (d2, c2) = px.dist2(i, j);
                            p.affinity(d2, c2) * q[j]
                        })
                        .sum()
                })
                .collect(),
            Messages::Window(r) => (0..n)
                .map(|i| {
                    window(i, px.w, h, *r)
                        .map(|j| {
                            let (d2, c2) = px.dist2(i, j);
                            p.affinity(d2, c2) * q[j]
                        })
                        .sum()
                })
                .collect(),
        }
    }
}

fn window(i: usize, w: usize, h: usize, r: usize) -> impl Iterator<Item = usize> {
    let (x, y) = (i % w, i / w);
    let (x0, x1) = (x.saturating_sub(r), (x + r).min(w - 1));
    let (y0, y1) = (y.saturating_sub(r), (y + r).min(h - 1));
    (y0..=y1)
        .flat_map(move |yy| (x0..=x1).map(move |xx| yy * w + xx))
        .filter(move |&j| j != i)
}

/// Mean-field marginals after initialization (index 0) and after every
/// iteration.
pub fn densecrf_trace(
    rgb: &RgbImage,
    unary: &ScalarField,
    p: &CrfParams,
) -> Result<Vec<Marginals>> {
    p.validate()?;
    let (w, h) = unary.dims();
    if rgb.dims() != (w, h) {
        return Err(Error::Dimensions {
            expected: (w, h),
            found: rgb.dims(),
        });
    }
    unary.check_unit("CRF unary")?;
    if p.window.is_none() && (w > CRF_MAX_SIDE || h > CRF_MAX_SIDE) {
        return Err(Error::InvalidParameter(format!(
            "exact CRF limited to {CRF_MAX_SIDE}x{CRF_MAX_SIDE}, got {w}x{h}; set a window"
        )));
    }
    let n = w * h;
    let px = Pixels { w, rgb };
    let clamp = f64::from(PROB_CLAMP);
    let prob: Vec<f64> = unary
        .data()
        .iter()
        .map(|&v| f64::from(v).clamp(clamp, 1.0 - clamp))
        .collect();
    let messages = Messages::new(p, &px, n);
    let ones = vec![1.0; n];
    // Total affinity K_i, so that the background message is K_i − m_i.
    let total = messages.apply(p, &px, &ones, h);

    let mut trace = Vec::with_capacity(p.iterations + 1);
    let mut current = marginals(&prob, |_| (0.0, 0.0));
    for _ in 0..p.iterations {
        let m = messages.apply(p, &px, &current.fg, h);
        let next = marginals(&prob, |i| (total[i] - m[i], m[i]));
        trace.push(core::mem::replace(&mut current, next));
    }
    trace.push(current);
    Ok(trace)
}

/// Normalized marginals from unaries plus Potts penalties `(pen_fg, pen_bg)`.
fn marginals(prob: &[f64], penalty: impl Fn(usize) -> (f64, f64)) -> Marginals {
    let mut fg = Vec::with_capacity(prob.len());
    let mut bg = Vec::with_capacity(prob.len());
    for (i, &pi) in prob.iter().enumerate() {
        let (pf, pb) = penalty(i);
        let ef = libm::log(pi) - pf;
        let eb = libm::log(1.0 - pi) - pb;
        let mx = ef.max(eb);
        let (a, b) = (libm::exp(ef - mx), libm::exp(eb - mx));
        fg.push(a / (a + b));
        bg.push(b / (a + b));
    }
    Marginals { fg, bg }
}

/// Foreground marginal after mean-field inference.
pub fn densecrf_refine(rgb: &RgbImage, unary: &ScalarField, p: &CrfParams) -> Result<ScalarField> {
    let trace = densecrf_trace(rgb, unary, p)?;
    let last = trace.last().expect("at least the initial marginals");
    ScalarField::unit(
        unary.width(),
        unary.height(),
        last.fg.iter().map(|&v| v as f32).collect(),
    )
}

/// How a pseudo-label is refreshed at the end of a round.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct UpdateConfig {
    pub crf: CrfParams,
    /// Threshold the CRF marginal at 0.5 instead of keeping it continuous.
    pub binarize: bool,
}

/// One committed label change.
#[derive(Debug, Clone, PartialEq)]
pub struct UpdateRecord {
    pub id: String,
    pub round: u32,
    pub pre: ScalarField,
    pub post: ScalarField,
}

/// CRF step shared by every update path, with optional binarization.
pub fn refine(rgb: &RgbImage, s: &ScalarField, cfg: &UpdateConfig) -> Result<ScalarField> {
    let out = densecrf_refine(rgb, s, &cfg.crf)?;
    Ok(if cfg.binarize {
        out.map(|v| if v >= 0.5 { 1.0 } else { 0.0 })
    } else {
        out
    })
}

/// Combined label from already computed network outputs.
pub fn dlu_label(
    rgb: &RgbImage,
    sal_pred: &ScalarField,
    d_sal: &ScalarField,
    d_nonsal: &ScalarField,
    cfg: &UpdateConfig,
) -> Result<ScalarField> {
    refine(rgb, &dlu_combine(sal_pred, d_sal, d_nonsal)?, cfg)
}

/// Eval-mode `(sal_pred, d_sal, d_nonsal)` for a batch of images.
pub fn predict_components(
    sal_net: &mut SaliencyNet,
    depth: &mut DepthSide,
    images: &[&RgbImage],
) -> Result<Vec<(ScalarField, ScalarField, ScalarField)>> {
    let x = stack_rgb(images)?;
    let (s, _) = sal_net.forward(&x, BnMode::Eval)?;
    let (ds, dn) = depth.infer_components(&x)?;
    let s = unstack_channel(&s, 0)?;
    let ds = unstack_channel(&ds, 0)?;
    let dn = unstack_channel(&dn, 0)?;
    Ok(s.into_iter()
        .zip(ds)
        .zip(dn)
        .map(|((a, b), c)| (a, b, c))
        .collect())
}

/// Full update of one sample: eval-mode forward, combination, CRF.
pub fn update_pseudo_label(
    id: &str,
    rgb: &RgbImage,
    pre: &ScalarField,
    round: u32,
    sal_net: &mut SaliencyNet,
    depth: &mut DepthSide,
    cfg: &UpdateConfig,
) -> Result<UpdateRecord> {
    let (s, ds, dn) = predict_components(sal_net, depth, &[rgb])?
        .pop()
        .expect("one image in, one prediction out");
    Ok(UpdateRecord {
        id: String::from(id),
        round,
        pre: pre.clone(),
        post: dlu_label(rgb, &s, &ds, &dn, cfg)?,
    })
}
