//! Depth disentanglement: holistic attention, saliency-guided depth masks,
//! the consistency loss and the combined depth-side objective.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::field::ScalarField;
use crate::nn::loss::{mse_backward, mse_per_sample};
use crate::nn::net::{
    build_depth_head, build_depth_net, build_dnonsal_head, build_dsal_head, join, DisentangleCache,
    DisentangleHead, HeadCache, SigmoidHead, Trunk, TrunkCache,
};
use crate::nn::tensor::stack_fields;
use crate::nn::{BnMode, Module, Param, Slot, Tensor4};
use crate::rng::SeedTree;

/// Square Gaussian kernel of fixed size and positive width.
///
/// Tap `i` sits at offset `i - size/2`, so even sizes lean one tap to the
/// negative side. Weights are renormalized to sum 1 on every evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianKernel {
    pub size: usize,
    pub sigma: f32,
}

impl GaussianKernel {
    pub fn new(size: usize, sigma: f32) -> Result<Self> {
        let k = Self { size, sigma };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        if self.size == 0 {
            return Err(Error::InvalidParameter(
                "kernel size must be positive".into(),
            ));
        }
        if !(self.sigma.is_finite() && self.sigma > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "kernel sigma must be positive, got {}",
                self.sigma
            )));
        }
        Ok(())
    }

    pub fn offsets(&self) -> impl Iterator<Item = isize> {
        let half = (self.size / 2) as isize;
        (0..self.size as isize).map(move |i| i - half)
    }

    /// Normalized 1-D taps and their derivative with respect to sigma.
    pub fn taps_with_grad(&self) -> (Vec<f64>, Vec<f64>) {
        let s = f64::from(self.sigma);
        let raw: Vec<f64> = self
            .offsets()
            .map(|o| libm::exp(-((o * o) as f64) / (2.0 * s * s)))
            .collect();
        let z: f64 = raw.iter().sum();
        let k: Vec<f64> = raw.iter().map(|r| r / z).collect();
        let o2: Vec<f64> = self.offsets().map(|o| (o * o) as f64).collect();
        let mean_o2: f64 = k.iter().zip(&o2).map(|(a, b)| a * b).sum();
        let s3 = s * s * s;
        let dk = k
            .iter()
            .zip(&o2)
            .map(|(ki, oi)| ki * (oi - mean_o2) / s3)
            .collect();
        (k, dk)
    }

    pub fn taps(&self) -> Vec<f64> {
        self.taps_with_grad().0
    }
}

/// Gaussian kernel whose sigma is a trainable parameter.
#[derive(Debug, Clone)]
pub struct LearnableKernel {
    pub size: usize,
    pub sigma: Param,
}

impl LearnableKernel {
    pub fn new(kernel: GaussianKernel) -> Result<Self> {
        kernel.validate()?;
        Ok(Self {
            size: kernel.size,
            sigma: Param::new(Tensor4::filled([1, 1, 1, 1], kernel.sigma)),
        })
    }

    /// Current kernel; fails if training drove sigma non-positive.
    pub fn kernel(&self) -> Result<GaussianKernel> {
        GaussianKernel::new(self.size, self.sigma.value.data()[0])
    }
}

impl Module for LearnableKernel {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, Slot<'_>)) {
        f(&join(prefix, "sigma"), Slot::Param(&mut self.sigma));
    }
}

/// Separable correlation with zero padding: `out = Σ_ij kv[i] kh[j] s(y+o_i, x+o_j)`.
fn separable_blur(s: &ScalarField, offsets: &[isize], kh: &[f64], kv: &[f64]) -> Vec<f64> {
    let (w, h) = s.dims();
    let data = s.data();
    let mut tmp = vec![0.0f64; w * h];
    for y in 0..h {
        let row = &data[y * w..(y + 1) * w];
        for x in 0..w {
            let mut acc = 0.0;
            for (&o, &k) in offsets.iter().zip(kh) {
                let xx = x as isize + o;
                if xx >= 0 && (xx as usize) < w {
                    acc += k * f64::from(row[xx as usize]);
                }
            }
            tmp[y * w + x] = acc;
        }
    }
    let mut out = vec![0.0f64; w * h];
    for (&o, &k) in offsets.iter().zip(kv) {
        for y in 0..h {
            let yy = y as isize + o;
            if yy < 0 || yy as usize >= h {
                continue;
            }
            let src = &tmp[yy as usize * w..(yy as usize + 1) * w];
            for (d, &v) in out[y * w..(y + 1) * w].iter_mut().zip(src) {
                *d += k * v;
            }
        }
    }
    out
}

/// Zero-padded Gaussian blur.
pub fn gaussian_blur(s: &ScalarField, k: &GaussianKernel) -> Result<ScalarField> {
    k.validate()?;
    let offsets: Vec<isize> = k.offsets().collect();
    let taps = k.taps();
    let out = separable_blur(s, &offsets, &taps, &taps);
    ScalarField::new(
        s.width(),
        s.height(),
        out.into_iter().map(|v| v as f32).collect(),
    )
}

/// `max(blur(s), s)` pointwise.
pub fn holistic_attention(s: &ScalarField, k: &GaussianKernel) -> Result<ScalarField> {
    Ok(holistic_attention_with_grad(s, k)?.0)
}

/// Holistic attention together with its pointwise derivative in sigma
/// (zero wherever the max selects the input).
pub fn holistic_attention_with_grad(
    s: &ScalarField,
    k: &GaussianKernel,
) -> Result<(ScalarField, Vec<f32>)> {
    k.validate()?;
    let offsets: Vec<isize> = k.offsets().collect();
    let (taps, dtaps) = k.taps_with_grad();
    let blur = separable_blur(s, &offsets, &taps, &taps);
    // d/dσ of the separable product is dk⊗k + k⊗dk.
    let mut dblur = separable_blur(s, &offsets, &dtaps, &taps);
    for (a, b) in dblur
        .iter_mut()
        .zip(separable_blur(s, &offsets, &taps, &dtaps))
    {
        *a += b;
    }
    let mut out = Vec::with_capacity(s.len());
    let mut grad = Vec::with_capacity(s.len());
    for ((&v, &b), &db) in s.data().iter().zip(&blur).zip(&dblur) {
        let b = b as f32;
        if b > v {
            out.push(b);
            grad.push(db as f32);
        } else {
            out.push(v);
            grad.push(0.0);
        }
    }
    Ok((ScalarField::new(s.width(), s.height(), out)?, grad))
}

/// Saliency- and non-saliency-guided depth masks with their sigma derivatives.
#[derive(Debug, Clone)]
pub struct MaskPair {
    pub d_sal: ScalarField,
    pub d_nonsal: ScalarField,
    pub(crate) dsigma_sal: Vec<f32>,
    pub(crate) dsigma_nonsal: Vec<f32>,
    pub(crate) selection: Vec<bool>,
}

fn masks_with_grad(sal: &ScalarField, d: &ScalarField, k: &GaussianKernel) -> Result<MaskPair> {
    sal.check_dims(d)?;
    let (ha_s, g_s) = holistic_attention_with_grad(sal, k)?;
    let (ha_n, g_n) = holistic_attention_with_grad(&sal.complement(), k)?;
    let scale = |g: Vec<f32>| {
        g.iter()
            .zip(d.data())
            .map(|(a, b)| a * b)
            .collect::<Vec<f32>>()
    };
    let nonsal = sal.complement();
    let mut selection: Vec<bool> = ha_s
        .data()
        .iter()
        .zip(sal.data())
        .map(|(h, v)| h > v)
        .collect();
    selection.extend(ha_n.data().iter().zip(nonsal.data()).map(|(h, v)| h > v));
    Ok(MaskPair {
        d_sal: ha_s.zip_map(d, |a, b| a * b)?,
        d_nonsal: ha_n.zip_map(d, |a, b| a * b)?,
        dsigma_sal: scale(g_s),
        dsigma_nonsal: scale(g_n),
        selection,
    })
}

/// `(HA(sal)·d, HA(1 − sal)·d)`.
pub fn build_masks_unsup(
    sal_pred: &ScalarField,
    d_map: &ScalarField,
    k: &GaussianKernel,
) -> Result<(ScalarField, ScalarField)> {
    let m = masks_with_grad(sal_pred, d_map, k)?;
    Ok((m.d_sal, m.d_nonsal))
}

/// Tolerance for accepting a ground-truth mask as binary.
pub const BINARY_TOL: f32 = 1e-6;

/// `(gt·d, (1 − gt)·d)` for a binary ground truth, without attention.
pub fn build_masks_supervised(
    s_gt: &ScalarField,
    d_map: &ScalarField,
) -> Result<(ScalarField, ScalarField)> {
    s_gt.check_dims(d_map)?;
    if !s_gt.is_binary(BINARY_TOL) {
        return Err(Error::OutOfRange("supervised mask must be binary".into()));
    }
    // Snap to exact {0, 1} so the two masks sum to d_map bit-for-bit.
    let g = s_gt.map(|v| if v > 0.5 { 1.0 } else { 0.0 });
    Ok((
        g.zip_map(d_map, |a, b| if a == 1.0 { b } else { 0.0 })?,
        g.zip_map(d_map, |a, b| if a == 1.0 { 0.0 } else { b })?,
    ))
}

/// Per-entry distance in the consistency loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Consistency {
    /// Absolute difference.
    #[default]
    L1,
    /// Squared difference.
    L2,
}

impl Consistency {
    fn value(self, d: f64) -> f64 {
        match self {
            Consistency::L1 => d.abs(),
            Consistency::L2 => d * d,
        }
    }

    fn derivative(self, d: f32) -> f32 {
        match self {
            Consistency::L1 => {
                if d > 0.0 {
                    1.0
                } else if d < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            }
            Consistency::L2 => 2.0 * d,
        }
    }
}

/// Consistency of each sample: mean distance over C×H×W.
pub fn consistency_per_sample(
    f: &Tensor4,
    f_tilde: &Tensor4,
    mode: Consistency,
) -> Result<Vec<f32>> {
    f.check_same_shape(f_tilde, "consistency")?;
    Ok((0..f.n())
        .map(|n| {
            let s: f64 = f
                .sample(n)
                .iter()
                .zip(f_tilde.sample(n))
                .map(|(&a, &b)| mode.value(f64::from(a) - f64::from(b)))
                .sum();
            (s / f.sample_len() as f64) as f32
        })
        .collect())
}

/// Mean distance over every entry of the two tensors.
pub fn consistency_loss(f: &Tensor4, f_tilde: &Tensor4, mode: Consistency) -> Result<f32> {
    let per = consistency_per_sample(f, f_tilde, mode)?;
    Ok((per.iter().map(|&v| f64::from(v)).sum::<f64>() / per.len().max(1) as f64) as f32)
}

/// Gradient of `Σ_n coef[n]·l_con,n` with respect to `f`; the gradient with
/// respect to `f_tilde` is its negation.
pub fn consistency_backward(
    f: &Tensor4,
    f_tilde: &Tensor4,
    mode: Consistency,
    coef: &[f32],
) -> Result<Tensor4> {
    f.check_same_shape(f_tilde, "consistency backward")?;
    let mut g = Tensor4::zeros(f.shape());
    let m = f.sample_len() as f32;
    for (n, &c) in coef.iter().enumerate().take(f.n()) {
        for ((o, &a), &b) in g
            .sample_mut(n)
            .iter_mut()
            .zip(f.sample(n))
            .zip(f_tilde.sample(n))
        {
            *o = c / m * mode.derivative(a - b);
        }
    }
    Ok(g)
}

/// Batch-mean component losses of the depth objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DepthLossBreakdown {
    pub l_d1: f32,
    pub l_d2: f32,
    pub l_sal: f32,
    pub l_nonsal: f32,
    pub l_con: f32,
    pub lambda: f32,
}

impl DepthLossBreakdown {
    /// `(l_d1 + l_d2 + l_sal + l_nonsal + λ·l_con) / 5`, i.e. the per-sample
    /// sum scaled by `1/(5N)`.
    pub fn total(&self) -> f32 {
        let s = f64::from(self.l_d1)
            + f64::from(self.l_d2)
            + f64::from(self.l_sal)
            + f64::from(self.l_nonsal)
            + f64::from(self.lambda) * f64::from(self.l_con);
        (s / 5.0) as f32
    }
}

/// Default weight of the consistency term.
pub const DEFAULT_LAMBDA: f32 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveConfig {
    pub lambda: f32,
    pub consistency: Consistency,
    /// When false the unsupervised masks skip attention: `(sal·d, (1 − sal)·d)`.
    pub holistic_attention: bool,
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        Self {
            lambda: DEFAULT_LAMBDA,
            consistency: Consistency::L1,
            holistic_attention: true,
        }
    }
}

/// Where the mask targets come from.
#[derive(Debug, Clone)]
pub enum MaskSource<'a> {
    /// Detached saliency predictions, one per sample.
    Predicted(&'a [ScalarField]),
    /// Binary ground truth (fully supervised variant).
    Supervised(&'a [ScalarField]),
}

/// One depth-side training batch.
#[derive(Debug, Clone)]
pub struct DepthBatch<'a> {
    /// N×3×H×W.
    pub rgb: &'a Tensor4,
    /// Depth maps, one per sample.
    pub depth: &'a [ScalarField],
    pub masks: MaskSource<'a>,
}

/// Depth network, shared depth head, the two disentangling heads and the
/// attention kernel.
#[derive(Debug, Clone)]
pub struct DepthSide {
    pub net: Trunk,
    pub head: SigmoidHead,
    pub dsal: DisentangleHead,
    pub dnonsal: DisentangleHead,
    pub kernel: LearnableKernel,
}

impl Module for DepthSide {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, Slot<'_>)) {
        self.net.visit(&join(prefix, "depth_net"), f);
        self.head.visit(&join(prefix, "depth_head"), f);
        self.dsal.visit(&join(prefix, "dsal"), f);
        self.dnonsal.visit(&join(prefix, "dnonsal"), f);
        self.kernel.visit(&join(prefix, "ha"), f);
    }
}

struct Masks {
    sal: Tensor4,
    nonsal: Tensor4,
    /// Per-sample sigma derivatives of each mask; absent when sigma is not used.
    dsigma: Option<(Vec<Vec<f32>>, Vec<Vec<f32>>)>,
    /// Which side of each attention max was taken.
    selection: Vec<bool>,
}

struct Forward {
    depth: Tensor4,
    masks: Masks,
    f: Tensor4,
    tc: TrunkCache,
    d1: Tensor4,
    hc1: HeadCache,
    ds: Tensor4,
    sc: DisentangleCache,
    dn: Tensor4,
    nc: DisentangleCache,
    ft: Tensor4,
    d2: Tensor4,
    hc2: HeadCache,
    loss: DepthLossBreakdown,
}

impl DepthSide {
    pub fn new(channels: usize, kernel: GaussianKernel, seeds: &SeedTree) -> Result<Self> {
        Ok(Self {
            net: build_depth_net(channels, &seeds.child("depth_net")),
            head: build_depth_head(channels, &seeds.child("depth_head")),
            dsal: build_dsal_head(channels, &seeds.child("dsal")),
            dnonsal: build_dnonsal_head(channels, &seeds.child("dnonsal")),
            kernel: LearnableKernel::new(kernel)?,
        })
    }

    fn masks(&self, batch: &DepthBatch<'_>, cfg: &ObjectiveConfig) -> Result<Masks> {
        let n = batch.depth.len();
        let mut sal = Vec::with_capacity(n);
        let mut nonsal = Vec::with_capacity(n);
        let mut dsigma = None;
        let mut selection = Vec::new();
        match batch.masks {
            MaskSource::Supervised(gt) => {
                check_count(gt.len(), n)?;
                for (g, d) in gt.iter().zip(batch.depth) {
                    let (a, b) = build_masks_supervised(g, d)?;
                    sal.push(a);
                    nonsal.push(b);
                }
            }
            MaskSource::Predicted(pred) => {
                check_count(pred.len(), n)?;
                if cfg.holistic_attention {
                    let k = self.kernel.kernel()?;
                    let (mut gs, mut gn) = (Vec::with_capacity(n), Vec::with_capacity(n));
                    for (p, d) in pred.iter().zip(batch.depth) {
                        let m = masks_with_grad(p, d, &k)?;
                        selection.extend(m.selection);
                        sal.push(m.d_sal);
                        nonsal.push(m.d_nonsal);
                        gs.push(m.dsigma_sal);
                        gn.push(m.dsigma_nonsal);
                    }
                    dsigma = Some((gs, gn));
                } else {
                    for (p, d) in pred.iter().zip(batch.depth) {
                        sal.push(p.zip_map(d, |a, b| a * b)?);
                        nonsal.push(p.complement().zip_map(d, |a, b| a * b)?);
                    }
                }
            }
        }
        Ok(Masks {
            sal: stack_fields(&sal.iter().collect::<Vec<_>>())?,
            nonsal: stack_fields(&nonsal.iter().collect::<Vec<_>>())?,
            dsigma,
            selection,
        })
    }

    fn forward(
        &mut self,
        batch: &DepthBatch<'_>,
        cfg: &ObjectiveConfig,
        mode: BnMode,
    ) -> Result<Forward> {
        let depth = stack_fields(&batch.depth.iter().collect::<Vec<_>>())?;
        let masks = self.masks(batch, cfg)?;
        let (f, tc) = self.net.forward(batch.rgb, mode)?;
        let (d1, hc1) = self.head.forward(&f)?;
        let (fs, ds, sc) = self.dsal.forward(&f, mode)?;
        let (fns, dn, nc) = self.dnonsal.forward(&f, mode)?;
        let ft = fs.add(&fns)?;
        let (d2, hc2) = self.head.forward(&ft)?;
        let loss = breakdown(
            &mse_per_sample(&d1, &depth)?,
            &mse_per_sample(&d2, &depth)?,
            &mse_per_sample(&ds, &masks.sal)?,
            &mse_per_sample(&dn, &masks.nonsal)?,
            &consistency_per_sample(&f, &ft, cfg.consistency)?,
            cfg.lambda,
        )?;
        Ok(Forward {
            depth,
            masks,
            f,
            tc,
            d1,
            hc1,
            ds,
            sc,
            dn,
            nc,
            ft,
            d2,
            hc2,
            loss,
        })
    }

    /// Evaluates the depth objective without touching gradients.
    pub fn objective(
        &mut self,
        batch: &DepthBatch<'_>,
        cfg: &ObjectiveConfig,
        mode: BnMode,
    ) -> Result<DepthLossBreakdown> {
        Ok(self.forward(batch, cfg, mode)?.loss)
    }

    /// The objective plus the branch taken by every piecewise operation
    /// (ReLUs, attention maxima, and the signs inside an L1 consistency),
    /// for kink-aware finite-difference checks.
    pub fn objective_with_pattern(
        &mut self,
        batch: &DepthBatch<'_>,
        cfg: &ObjectiveConfig,
        mode: BnMode,
    ) -> Result<(DepthLossBreakdown, Vec<bool>)> {
        let fw = self.forward(batch, cfg, mode)?;
        let mut p = fw.masks.selection.clone();
        fw.tc.branch_pattern(&mut p);
        fw.sc.branch_pattern(&mut p);
        fw.nc.branch_pattern(&mut p);
        if cfg.consistency == Consistency::L1 {
            p.extend(fw.f.data().iter().zip(fw.ft.data()).map(|(a, b)| a > b));
        }
        Ok((fw.loss, p))
    }

    /// Evaluates the objective in training mode and accumulates its gradient
    /// into every parameter, including sigma when attention masks are used.
    pub fn objective_and_grad(
        &mut self,
        batch: &DepthBatch<'_>,
        cfg: &ObjectiveConfig,
    ) -> Result<DepthLossBreakdown> {
        let fw = self.forward(batch, cfg, BnMode::Train)?;
        let n = fw.f.n();
        let c = vec![1.0 / (5.0 * n as f32); n];
        let c_con = vec![cfg.lambda / (5.0 * n as f32); n];

        let mut g_f = self
            .head
            .backward(&fw.hc1, &mse_backward(&fw.d1, &fw.depth, &c)?)?;
        let mut g_ft = self
            .head
            .backward(&fw.hc2, &mse_backward(&fw.d2, &fw.depth, &c)?)?;
        let g_con = consistency_backward(&fw.f, &fw.ft, cfg.consistency, &c_con)?;
        for ((a, b), &g) in g_f
            .data_mut()
            .iter_mut()
            .zip(g_ft.data_mut())
            .zip(g_con.data())
        {
            *a += g;
            *b -= g;
        }
        let g_ds = mse_backward(&fw.ds, &fw.masks.sal, &c)?;
        let g_dn = mse_backward(&fw.dn, &fw.masks.nonsal, &c)?;
        let gs = self.dsal.backward(&fw.sc, &g_ft, &g_ds)?;
        let gn = self.dnonsal.backward(&fw.nc, &g_ft, &g_dn)?;
        for ((a, b), d) in g_f.data_mut().iter_mut().zip(gs.data()).zip(gn.data()) {
            *a += b + d;
        }
        self.net.backward(&fw.tc, &g_f)?;

        if let Some((gs_sig, gn_sig)) = &fw.masks.dsigma {
            // The target enters the MSE with the opposite sign of the prediction.
            let mut g = 0.0f64;
            for i in 0..n {
                for ((&gp, &dm), (&gq, &dq)) in g_ds
                    .sample(i)
                    .iter()
                    .zip(&gs_sig[i])
                    .zip(g_dn.sample(i).iter().zip(&gn_sig[i]))
                {
                    g -= f64::from(gp) * f64::from(dm) + f64::from(gq) * f64::from(dq);
                }
            }
            self.kernel.sigma.accumulate(&[g as f32]);
        }
        Ok(fw.loss)
    }

    /// Eval-mode disentangled depth components for a batch.
    pub fn infer_components(&mut self, rgb: &Tensor4) -> Result<(Tensor4, Tensor4)> {
        let (f, _) = self.net.forward(rgb, BnMode::Eval)?;
        let (_, ds, _) = self.dsal.forward(&f, BnMode::Eval)?;
        let (_, dn, _) = self.dnonsal.forward(&f, BnMode::Eval)?;
        Ok((ds, dn))
    }
}

fn check_count(found: usize, expected: usize) -> Result<()> {
    if found != expected {
        return Err(Error::InvalidParameter(format!(
            "mask source has {found} entries for a batch of {expected}"
        )));
    }
    Ok(())
}

fn batch_mean(v: &[f32]) -> f32 {
    (v.iter().map(|&x| f64::from(x)).sum::<f64>() / v.len().max(1) as f64) as f32
}

fn breakdown(
    d1: &[f32],
    d2: &[f32],
    sal: &[f32],
    nonsal: &[f32],
    con: &[f32],
    lambda: f32,
) -> Result<DepthLossBreakdown> {
    let b = DepthLossBreakdown {
        l_d1: batch_mean(d1),
        l_d2: batch_mean(d2),
        l_sal: batch_mean(sal),
        l_nonsal: batch_mean(nonsal),
        l_con: batch_mean(con),
        lambda,
    };
    if !b.total().is_finite() {
        return Err(Error::NonFinite("depth objective".into()));
    }
    Ok(b)
}
