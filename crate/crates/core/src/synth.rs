//! Synthetic RGB-D scenes with ground truth and a corrupted initial label.
//!
//! Each scene is a textured, low-saturation background with one or more
//! flat, saturated ellipses or rectangles standing out in depth. The initial
//! pseudo-label is the ground truth damaged by random dilation, erosion,
//! holes and background blobs until it sits near a requested MAE.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::field::{RgbImage, ScalarField};
use crate::metrics::mae;
use crate::rng::{Rng, SeedTree};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Shape {
    Ellipse,
    Rectangle,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CorruptionOp {
    Dilate,
    Erode,
    Hole,
    BackgroundBlob,
}

pub const ALL_OPS: [CorruptionOp; 4] = [
    CorruptionOp::Dilate,
    CorruptionOp::Erode,
    CorruptionOp::Hole,
    CorruptionOp::BackgroundBlob,
];

/// Accepted relative deviation from the requested corruption MAE.
pub const MAE_TOLERANCE: f32 = 0.2;
pub const MAX_ATTEMPTS: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct CorruptionSpec {
    /// Requested MAE between corrupted label and ground truth; 0 disables
    /// corruption.
    pub target_mae: f32,
    pub ops: Vec<CorruptionOp>,
    /// Largest radius (px) of any morphological step, hole or blob.
    pub max_radius: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub width: usize,
    pub height: usize,
    pub samples: usize,
    /// How many of the samples (taken from the end) form the eval split.
    pub eval_samples: usize,
    /// Inclusive range of objects per scene.
    pub objects: (usize, usize),
    pub shapes: Vec<Shape>,
    /// Depth offset of objects over the background, in [0, 1].
    pub depth_separation: f32,
    pub corruption: CorruptionSpec,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            width: 64,
            height: 64,
            samples: 60,
            eval_samples: 12,
            objects: (1, 2),
            shapes: vec![Shape::Ellipse, Shape::Rectangle],
            depth_separation: 0.5,
            corruption: CorruptionSpec {
                target_mae: 0.15,
                ops: ALL_OPS.to_vec(),
                max_radius: 8,
            },
            seed: 42,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParameter(String::from(m)));
        if self.width < 8 || self.height < 8 {
            return bad("synthetic images must be at least 8x8");
        }
        if self.eval_samples > self.samples {
            return bad("eval split larger than the corpus");
        }
        if self.objects.0 == 0 || self.objects.0 > self.objects.1 {
            return bad("object count range must be non-empty and start at 1 or more");
        }
        if self.shapes.is_empty() {
            return bad("at least one shape kind is required");
        }
        if !(0.0..=1.0).contains(&self.depth_separation) {
            return bad("depth separation must lie in [0, 1]");
        }
        let c = &self.corruption;
        if !(0.0..1.0).contains(&c.target_mae) {
            return bad("corruption target MAE must lie in [0, 1)");
        }
        if c.target_mae > 0.0 && (c.ops.is_empty() || c.max_radius == 0) {
            return bad("corruption needs at least one op and a positive radius");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Eval,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSample {
    pub id: String,
    pub split: Split,
    pub rgb: RgbImage,
    pub depth: ScalarField,
    pub gt: ScalarField,
    pub pseudo: ScalarField,
}

#[derive(Debug, Clone, Copy)]
struct Object {
    shape: Shape,
    cx: f32,
    cy: f32,
    rx: f32,
    ry: f32,
}

impl Object {
    fn contains(&self, x: usize, y: usize) -> bool {
        let dx = (x as f32 + 0.5 - self.cx) / self.rx;
        let dy = (y as f32 + 0.5 - self.cy) / self.ry;
        match self.shape {
            Shape::Ellipse => dx * dx + dy * dy <= 1.0,
            Shape::Rectangle => dx.abs() <= 1.0 && dy.abs() <= 1.0,
        }
    }
}

/// Low-saturation background tone.
fn background_color(rng: &mut Rng) -> [f32; 3] {
    let g: f32 = rng.random_range(0.25..0.75);
    [0, 1, 2].map(|_| g + rng.random_range(-0.08f32..0.08))
}

/// Saturated object color: one strong channel, one weak, one free.
fn object_color(rng: &mut Rng) -> [f32; 3] {
    let mut c = [
        rng.random_range(0.75f32..1.0),
        rng.random_range(0.0f32..0.25),
        rng.random_range(0.0f32..1.0),
    ];
    c.shuffle(rng);
    c
}

/// Renders one scene. Returns rgb, depth and the binary object mask.
fn render(spec: &SynthSpec, rng: &mut Rng) -> (RgbImage, ScalarField, ScalarField) {
    let (w, h) = (spec.width, spec.height);
    let side = w.min(h) as f32;
    let count = rng.random_range(spec.objects.0..=spec.objects.1);
    let bg_color = background_color(rng);
    let bg_depth: f32 = rng.random_range(0.1..0.3);
    let mut objects = Vec::with_capacity(count);
    for _ in 0..count {
        let obj = Object {
            shape: spec.shapes[rng.random_range(0..spec.shapes.len())],
            cx: rng.random_range(0.25..0.75) * w as f32,
            cy: rng.random_range(0.25..0.75) * h as f32,
            rx: rng.random_range(0.12..0.28) * side,
            ry: rng.random_range(0.12..0.28) * side,
        };
        let color = object_color(rng);
        let depth = bg_depth + spec.depth_separation * rng.random_range(0.7f32..1.0);
        objects.push((obj, color, depth));
    }
    // Per pixel, the last object drawn wins.
    let owner: Vec<Option<usize>> = (0..w * h)
        .map(|i| {
            (0..count)
                .rev()
                .find(|&k| objects[k].0.contains(i % w, i / w))
        })
        .collect();
    let noise = Normal::new(0.0f32, 0.02).expect("valid stddev");
    // Backgrounds are textured, objects nearly flat.
    let texture = Normal::new(0.0f32, 0.08).expect("valid stddev");
    let grain = Normal::new(0.0f32, 0.02).expect("valid stddev");
    let mut planes = [vec![0.0; w * h], vec![0.0; w * h], vec![0.0; w * h]];
    let mut depth = vec![0.0; w * h];
    for i in 0..w * h {
        let (x, y) = (i % w, i / w);
        let (color, d, tex) = match owner[i] {
            Some(k) => (objects[k].1, objects[k].2, &grain),
            None => (bg_color, bg_depth, &texture),
        };
        // Mild ground-plane ramp: nearer towards the bottom of the frame.
        let ramp = 0.1 * y as f32 / (h - 1) as f32;
        depth[i] = (d + ramp + noise.sample(rng)).clamp(0.0, 1.0);
        let shade = 0.05 * (x as f32 / (w - 1) as f32 - 0.5);
        for (c, plane) in planes.iter_mut().enumerate() {
            plane[i] = (color[c] + shade + tex.sample(rng)).clamp(0.0, 1.0);
        }
    }
    let gt = owner
        .iter()
        .map(|o| if o.is_some() { 1.0 } else { 0.0 })
        .collect();
    (
        RgbImage::new(w, h, planes).expect("planes sized w*h"),
        ScalarField::new(w, h, depth).expect("finite depth"),
        ScalarField::new(w, h, gt).expect("binary mask"),
    )
}

fn morph(mask: &[bool], w: usize, h: usize, r: usize, grow: bool) -> Vec<bool> {
    let r2 = (r * r) as isize;
    let r = r as isize;
    (0..w * h)
        .map(|i| {
            let (x, y) = ((i % w) as isize, (i / w) as isize);
            let mut hit = !grow;
            'scan: for dy in -r..=r {
                for dx in -r..=r {
                    if dx * dx + dy * dy > r2 {
                        continue;
                    }
                    let (xx, yy) = (x + dx, y + dy);
                    let inside = xx >= 0 && yy >= 0 && xx < w as isize && yy < h as isize;
                    // Outside the frame counts as background.
                    let v = inside && mask[yy as usize * w + xx as usize];
                    if grow && v {
                        hit = true;
                        break 'scan;
                    }
                    if !grow && !v {
                        hit = false;
                        break 'scan;
                    }
                }
            }
            hit
        })
        .collect()
}

fn stamp_disc(mask: &mut [bool], w: usize, h: usize, cx: usize, cy: usize, r: usize, value: bool) {
    let r2 = (r * r) as isize;
    for y in cy.saturating_sub(r)..(cy + r + 1).min(h) {
        for x in cx.saturating_sub(r)..(cx + r + 1).min(w) {
            let (dx, dy) = (x as isize - cx as isize, y as isize - cy as isize);
            if dx * dx + dy * dy <= r2 {
                mask[y * w + x] = value;
            }
        }
    }
}

fn apply_op(
    mask: &[bool],
    w: usize,
    h: usize,
    op: CorruptionOp,
    r: usize,
    rng: &mut Rng,
) -> Vec<bool> {
    match op {
        CorruptionOp::Dilate => morph(mask, w, h, r, true),
        CorruptionOp::Erode => morph(mask, w, h, r, false),
        CorruptionOp::Hole | CorruptionOp::BackgroundBlob => {
            let want = op == CorruptionOp::Hole;
            let candidates: Vec<usize> = (0..w * h).filter(|&i| mask[i] == want).collect();
            let mut out = mask.to_vec();
            if let Some(&i) = candidates.get(rng.random_range(0..candidates.len().max(1))) {
                stamp_disc(&mut out, w, h, i % w, i / w, r, !want);
            }
            out
        }
    }
}

fn to_field(mask: &[bool], w: usize, h: usize) -> ScalarField {
    ScalarField::new(
        w,
        h,
        mask.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect(),
    )
    .expect("binary")
}

/// Damages `gt` with random ops until its MAE lies within ±20% of the
/// target, retrying whole sequences up to [`MAX_ATTEMPTS`] times.
pub fn corrupt(gt: &ScalarField, spec: &CorruptionSpec, rng: &mut Rng) -> Result<ScalarField> {
    if spec.target_mae == 0.0 {
        return Ok(gt.clone());
    }
    let (w, h) = gt.dims();
    let lo = spec.target_mae * (1.0 - MAE_TOLERANCE);
    let hi = spec.target_mae * (1.0 + MAE_TOLERANCE);
    // Aim for the middle of the band so runs do not pile up at its bottom.
    let aim = spec.target_mae * 0.95;
    let base: Vec<bool> = gt.data().iter().map(|&v| v > 0.5).collect();
    for _ in 0..MAX_ATTEMPTS {
        let mut cur = base.clone();
        let mut err = 0.0f32;
        for _ in 0..64 {
            let op = spec.ops[rng.random_range(0..spec.ops.len())];
            let r = rng.random_range(1..=spec.max_radius);
            let cand = apply_op(&cur, w, h, op, r, rng);
            let e = mae(&to_field(&cand, w, h), gt)? as f32;
            if e <= hi {
                cur = cand;
                err = e;
            }
            if err >= aim {
                break;
            }
        }
        if (lo..=hi).contains(&err) {
            return Ok(to_field(&cur, w, h));
        }
    }
    Err(Error::InvalidParameter(format!(
        "could not reach corruption MAE {} within {MAX_ATTEMPTS} attempts",
        spec.target_mae
    )))
}

/// Generates the whole corpus. Sample `i` depends only on the seed and `i`.
pub fn synth_generate(spec: &SynthSpec) -> Result<Vec<SynthSample>> {
    spec.validate()?;
    let root = SeedTree::new(spec.seed).child("synth");
    let train = spec.samples - spec.eval_samples;
    (0..spec.samples)
        .map(|i| {
            let node = root.indexed(i as u64);
            let (rgb, depth, gt) = render(spec, &mut node.stream("scene"));
            let pseudo = corrupt(&gt, &spec.corruption, &mut node.stream("corrupt"))?;
            Ok(SynthSample {
                id: format!("synth_{i:04}"),
                split: if i < train { Split::Train } else { Split::Eval },
                rgb,
                depth,
                gt,
                pseudo,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(seed: u64, target: f32) -> SynthSpec {
        SynthSpec {
            width: 32,
            height: 32,
            samples: 6,
            eval_samples: 2,
            corruption: CorruptionSpec {
                target_mae: target,
                ops: ALL_OPS.to_vec(),
                max_radius: 4,
            },
            seed,
            ..SynthSpec::default()
        }
    }

    #[test]
    fn zero_corruption_is_identity() {
        for s in synth_generate(&small(3, 0.0)).unwrap() {
            assert_eq!(s.pseudo, s.gt);
        }
    }

    #[test]
    fn deterministic_and_split() {
        let a = synth_generate(&small(9, 0.15)).unwrap();
        assert_eq!(a, synth_generate(&small(9, 0.15)).unwrap());
        assert_ne!(a, synth_generate(&small(10, 0.15)).unwrap());
        assert_eq!(a.iter().filter(|s| s.split == Split::Eval).count(), 2);
        assert_eq!(a[5].split, Split::Eval);
    }

    #[test]
    fn default_corpus_hits_target() {
        let corpus = synth_generate(&SynthSpec::default()).unwrap();
        assert_eq!(corpus.len(), 60);
        for s in &corpus {
            assert!(s.gt.is_binary(0.0));
            assert!(s.gt.data().contains(&1.0));
            let m = mae(&s.pseudo, &s.gt).unwrap();
            assert!((0.12..=0.18).contains(&m), "{}: {m}", s.id);
            assert!(s.depth.data().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn objects_stand_out_in_depth() {
        for s in synth_generate(&small(4, 0.0)).unwrap() {
            let (mut fg, mut bg, mut nf, mut nb) = (0.0, 0.0, 0.0, 0.0);
            for (&d, &g) in s.depth.data().iter().zip(s.gt.data()) {
                if g == 1.0 {
                    fg += d;
                    nf += 1.0;
                } else {
                    bg += d;
                    nb += 1.0;
                }
            }
            assert!(fg / nf > bg / nb + 0.2);
        }
    }

    #[test]
    fn morphology() {
        let mut m = vec![false; 49];
        m[24] = true;
        let d = morph(&m, 7, 7, 1, true);
        assert_eq!(d.iter().filter(|&&b| b).count(), 5);
        assert_eq!(morph(&d, 7, 7, 1, false), m);
    }

    #[test]
    fn rejects_bad_specs() {
        let mut s = small(1, 0.15);
        s.eval_samples = 7;
        assert!(synth_generate(&s).is_err());
        let mut s = small(1, 0.15);
        s.objects = (0, 2);
        assert!(s.validate().is_err());
        let mut s = small(1, 0.15);
        s.corruption.ops.clear();
        assert!(s.validate().is_err());
    }
}
