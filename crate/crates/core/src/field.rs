//! Two-dimensional scalar fields and RGB images.
//!
//! [`ScalarField`] carries every single-channel map in the pipeline:
//! predictions, depth, pseudo-labels, masks and the intermediate update
//! fields. Values are always finite; constructors that take the `unit`
//! suffix additionally require `[0, 1]`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// H×W grid of 32-bit reals stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl ScalarField {
    /// Builds a field from row-major data. Rejects wrong lengths and
    /// non-finite entries.
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::Length {
                len: data.len(),
                width,
                height,
            });
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("scalar field at index {i}")));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    /// Like [`ScalarField::new`] but also requires every value in `[0, 1]`.
    pub fn unit(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        let f = Self::new(width, height, data)?;
        f.check_unit("scalar field")?;
        Ok(f)
    }

    pub fn filled(width: usize, height: usize, value: f32) -> Self {
        assert!(value.is_finite());
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self::filled(width, height, 0.0)
    }

    /// Field with `f(x, y)` at every pixel. Panics on non-finite output.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                let v = f(x, y);
                assert!(v.is_finite(), "non-finite value at ({x}, {y})");
                data.push(v);
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    /// Decodes 8-bit samples with the exact mapping `v / 255`.
    pub fn from_u8(width: usize, height: usize, bytes: &[u8]) -> Result<Self> {
        Self::new(
            width,
            height,
            bytes.iter().map(|&b| f32::from(b) / 255.0).collect(),
        )
    }

    /// Quantizes to 8 bits (`round(v * 255)`, clamped).
    pub fn to_u8(&self) -> Vec<u8> {
        self.data.iter().map(|&v| quantize(v)).collect()
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }

    pub fn min(&self) -> f32 {
        self.data.iter().copied().fold(f32::INFINITY, f32::min)
    }

    pub fn max(&self) -> f32 {
        self.data.iter().copied().fold(f32::NEG_INFINITY, f32::max)
    }

    pub fn mean(&self) -> f32 {
        (self.data.iter().map(|&v| f64::from(v)).sum::<f64>() / self.data.len() as f64) as f32
    }

    pub fn check_dims(&self, other: &ScalarField) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::Dimensions {
                expected: self.dims(),
                found: other.dims(),
            });
        }
        Ok(())
    }

    pub fn check_unit(&self, what: &str) -> Result<()> {
        if self.data.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::OutOfRange(what.into()));
        }
        Ok(())
    }

    /// Pointwise map. Panics if `f` produces a non-finite value.
    pub fn map(&self, f: impl Fn(f32) -> f32) -> ScalarField {
        let data: Vec<f32> = self.data.iter().map(|&v| f(v)).collect();
        assert!(data.iter().all(|v| v.is_finite()));
        ScalarField {
            width: self.width,
            height: self.height,
            data,
        }
    }

    /// Pointwise combination of two same-sized fields.
    pub fn zip_map(&self, other: &ScalarField, f: impl Fn(f32, f32) -> f32) -> Result<ScalarField> {
        self.check_dims(other)?;
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| f(a, b))
            .collect();
        ScalarField::new(self.width, self.height, data)
    }

    /// `1 - v` at every pixel.
    pub fn complement(&self) -> ScalarField {
        self.map(|v| 1.0 - v)
    }

    pub fn flip_horizontal(&self) -> ScalarField {
        let mut data = Vec::with_capacity(self.data.len());
        for row in self.data.chunks(self.width) {
            data.extend(row.iter().rev());
        }
        ScalarField {
            width: self.width,
            height: self.height,
            data,
        }
    }

    /// Binarizes at `v > threshold`.
    pub fn binarize(&self, threshold: f32) -> ScalarField {
        self.map(|v| if v > threshold { 1.0 } else { 0.0 })
    }

    pub fn is_binary(&self, tol: f32) -> bool {
        self.data
            .iter()
            .all(|&v| v.abs() <= tol || (v - 1.0).abs() <= tol)
    }
}

pub(crate) fn quantize(v: f32) -> u8 {
    let q = libm::roundf(v * 255.0);
    q.clamp(0.0, 255.0) as u8
}

/// Three-plane RGB image with channel values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbImage {
    width: usize,
    height: usize,
    planes: [Vec<f32>; 3],
}

impl RgbImage {
    pub fn new(width: usize, height: usize, planes: [Vec<f32>; 3]) -> Result<Self> {
        for p in &planes {
            if p.len() != width * height {
                return Err(Error::Length {
                    len: p.len(),
                    width,
                    height,
                });
            }
            if p.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::OutOfRange("rgb image".into()));
            }
        }
        Ok(Self {
            width,
            height,
            planes,
        })
    }

    /// Decodes interleaved 8-bit RGB samples.
    pub fn from_interleaved_u8(width: usize, height: usize, bytes: &[u8]) -> Result<Self> {
        if bytes.len() != width * height * 3 {
            return Err(Error::Length {
                len: bytes.len() / 3,
                width,
                height,
            });
        }
        let mut planes = [Vec::new(), Vec::new(), Vec::new()];
        for (c, plane) in planes.iter_mut().enumerate() {
            *plane = bytes
                .iter()
                .skip(c)
                .step_by(3)
                .map(|&b| f32::from(b) / 255.0)
                .collect();
        }
        Self::new(width, height, planes)
    }

    pub fn to_interleaved_u8(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.width * self.height * 3);
        for i in 0..self.width * self.height {
            for p in &self.planes {
                out.push(quantize(p[i]));
            }
        }
        out
    }

    /// Grayscale replicated into three planes.
    pub fn from_gray(f: &ScalarField) -> Result<Self> {
        let d = f.data().to_vec();
        Self::new(f.width(), f.height(), [d.clone(), d.clone(), d])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn plane(&self, c: usize) -> &[f32] {
        &self.planes[c]
    }

    pub fn pixel(&self, x: usize, y: usize) -> [f32; 3] {
        let i = y * self.width + x;
        [self.planes[0][i], self.planes[1][i], self.planes[2][i]]
    }

    pub fn flip_horizontal(&self) -> RgbImage {
        let planes = self.planes.clone().map(|p| {
            ScalarField {
                width: self.width,
                height: self.height,
                data: p,
            }
            .flip_horizontal()
            .data
        });
        RgbImage {
            width: self.width,
            height: self.height,
            planes,
        }
    }

    pub fn resize_bilinear(&self, width: usize, height: usize) -> Result<RgbImage> {
        let mut planes = [Vec::new(), Vec::new(), Vec::new()];
        for (c, out) in planes.iter_mut().enumerate() {
            let f = ScalarField {
                width: self.width,
                height: self.height,
                data: self.planes[c].clone(),
            };
            *out = resize_bilinear(&f, width, height)?.data;
        }
        Ok(RgbImage {
            width,
            height,
            planes,
        })
    }
}

/// `(f - min) / (max - min)`; a constant field maps to all zeros.
pub fn minmax_normalize(f: &ScalarField) -> ScalarField {
    let (lo, hi) = (f.min(), f.max());
    let range = hi - lo;
    if !(range > 0.0) {
        return ScalarField::zeros(f.width, f.height);
    }
    f.map(|v| ((v - lo) / range).clamp(0.0, 1.0))
}

/// Replaces negative values by zero and leaves the rest untouched.
///
/// Fields are finite by construction, so there is no non-finite case left
/// to report here.
pub fn clamp_nonneg(f: &ScalarField) -> ScalarField {
    f.map(|v| if v < 0.0 { 0.0 } else { v })
}

/// 256-bin histogram of `round(v * 255)`.
pub fn histogram256(f: &ScalarField) -> [u64; 256] {
    let mut hist = [0u64; 256];
    for &v in f.data() {
        hist[quantize(v) as usize] += 1;
    }
    hist
}

/// Otsu's threshold on the 256-bin quantization of `f`.
///
/// Returns the boundary `(k + 0.5) / 255` (clamped to `[0, 1]`) above the
/// background bin `k` that maximizes the between-class variance, with ties
/// going to the lowest `k`. Pixels with `v > threshold` are foreground. A
/// field that occupies a single bin returns that bin's upper edge.
pub fn otsu_threshold(f: &ScalarField) -> f32 {
    let hist = histogram256(f);
    let k = otsu_bin(&hist);
    ((k as f32 + 0.5) / 255.0).min(1.0)
}

pub(crate) fn otsu_bin(hist: &[u64; 256]) -> usize {
    let total: u64 = hist.iter().sum();
    if total == 0 {
        return 0;
    }
    let total_f = total as f64;
    let sum_all: f64 = hist
        .iter()
        .enumerate()
        .map(|(i, &c)| i as f64 * c as f64)
        .sum();

    let mut best_k = None;
    let mut best_var = -1.0f64;
    let (mut w0, mut sum0) = (0u64, 0.0f64);
    for (k, &c) in hist.iter().enumerate() {
        w0 += c;
        sum0 += k as f64 * c as f64;
        let w1 = total - w0;
        if w0 == 0 || w1 == 0 {
            continue;
        }
        let mu0 = sum0 / w0 as f64;
        let mu1 = (sum_all - sum0) / w1 as f64;
        let var = (w0 as f64 / total_f) * (w1 as f64 / total_f) * (mu0 - mu1) * (mu0 - mu1);
        if var > best_var {
            best_var = var;
            best_k = Some(k);
        }
    }
    match best_k {
        Some(k) => k,
        // Single occupied bin.
        None => hist.iter().position(|&c| c > 0).unwrap_or(0),
    }
}

/// Bilinear resize with half-pixel-center alignment and edge clamping.
pub fn resize_bilinear(f: &ScalarField, width: usize, height: usize) -> Result<ScalarField> {
    if width == 0 || height == 0 {
        return Err(Error::InvalidParameter("zero target dimension".into()));
    }
    if f.dims() == (width, height) {
        return Ok(f.clone());
    }
    let sx = f.width as f32 / width as f32;
    let sy = f.height as f32 / height as f32;
    let taps = |dst: usize, scale: f32, len: usize| {
        let src = ((dst as f32 + 0.5) * scale - 0.5).clamp(0.0, (len - 1) as f32);
        let i0 = src as usize;
        let i1 = (i0 + 1).min(len - 1);
        (i0, i1, src - i0 as f32)
    };
    let mut data = Vec::with_capacity(width * height);
    for y in 0..height {
        let (y0, y1, fy) = taps(y, sy, f.height);
        for x in 0..width {
            let (x0, x1, fx) = taps(x, sx, f.width);
            let top = f.get(x0, y0) * (1.0 - fx) + f.get(x1, y0) * fx;
            let bottom = f.get(x0, y1) * (1.0 - fx) + f.get(x1, y1) * fx;
            data.push(top * (1.0 - fy) + bottom * fy);
        }
    }
    // Convex combinations cannot leave the input range, up to rounding.
    let (lo, hi) = (f.min(), f.max());
    for v in &mut data {
        *v = v.clamp(lo, hi);
    }
    ScalarField::new(width, height, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use proptest::prelude::*;

    fn row(v: &[f32]) -> ScalarField {
        ScalarField::new(v.len(), 1, v.to_vec()).unwrap()
    }

    #[test]
    fn u8_mapping() {
        let z = ScalarField::from_u8(4, 4, &[0; 16]).unwrap();
        assert!(z.data().iter().all(|&v| v == 0.0));
        let o = ScalarField::from_u8(4, 4, &[255; 16]).unwrap();
        assert!(o.data().iter().all(|&v| v == 1.0));
        let h = ScalarField::from_u8(1, 1, &[128]).unwrap();
        assert!((h.get(0, 0) - 0.50196).abs() < 1e-5);
        assert_eq!(h.to_u8(), vec![128]);
    }

    #[test]
    fn constructors_validate() {
        assert!(matches!(
            ScalarField::new(2, 2, vec![0.0; 3]),
            Err(Error::Length { .. })
        ));
        assert!(matches!(
            ScalarField::new(1, 1, vec![f32::NAN]),
            Err(Error::NonFinite(_))
        ));
        assert!(matches!(
            ScalarField::unit(1, 1, vec![1.5]),
            Err(Error::OutOfRange(_))
        ));
    }

    #[test]
    fn minmax_examples() {
        assert_eq!(
            minmax_normalize(&row(&[0.0, 0.5, 1.0])).data(),
            &[0.0, 0.5, 1.0]
        );
        let n = minmax_normalize(&row(&[0.2, 0.4, 0.6]));
        for (a, b) in n.data().iter().zip([0.0, 0.5, 1.0]) {
            assert!((a - b).abs() < 1e-6);
        }
        assert!(minmax_normalize(&ScalarField::filled(3, 3, 0.7))
            .data()
            .iter()
            .all(|&v| v == 0.0));
    }

    #[test]
    fn clamp_examples() {
        assert_eq!(clamp_nonneg(&row(&[-0.1, 0.9])).data(), &[0.0, 0.9]);
        assert_eq!(clamp_nonneg(&row(&[0.1, 0.9])).data(), &[0.1, 0.9]);
        assert_eq!(clamp_nonneg(&row(&[-0.1, -2.0])).data(), &[0.0, 0.0]);
    }

    #[test]
    fn otsu_two_level_and_constant() {
        let mut d = vec![0.0; 32];
        d.extend(vec![1.0; 32]);
        let f = ScalarField::new(8, 8, d).unwrap();
        let t = otsu_threshold(&f);
        assert!(t > 0.0 && t < 1.0);
        assert_eq!(t, 0.5 / 255.0);
        let c = ScalarField::filled(4, 4, 100.0 / 255.0);
        assert_eq!(otsu_threshold(&c), 100.5 / 255.0);
    }

    #[test]
    fn resize_examples() {
        let f = ScalarField::new(2, 2, vec![0.0, 1.0, 0.0, 1.0]).unwrap();
        assert_eq!(resize_bilinear(&f, 2, 2).unwrap(), f);
        // Half-pixel centers: source x = (x + 0.5) * 0.5 - 0.5, clamped.
        let r = resize_bilinear(&f, 4, 2).unwrap();
        let expect = [0.0, 0.25, 0.75, 1.0];
        for y in 0..2 {
            for x in 0..4 {
                assert!((r.get(x, y) - expect[x]).abs() < 1e-6);
            }
        }
        let c = resize_bilinear(&ScalarField::filled(3, 5, 0.3), 7, 2).unwrap();
        assert!(c.data().iter().all(|&v| (v - 0.3).abs() < 1e-7));
        assert!(resize_bilinear(&f, 0, 2).is_err());
    }

    #[test]
    fn flip_is_involution() {
        let f = ScalarField::new(3, 2, vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6]).unwrap();
        assert_eq!(f.flip_horizontal().data(), &[0.3, 0.2, 0.1, 0.6, 0.5, 0.4]);
        assert_eq!(f.flip_horizontal().flip_horizontal(), f);
    }

    fn exhaustive_otsu(f: &ScalarField) -> f32 {
        let q: Vec<usize> = f.to_u8().into_iter().map(usize::from).collect();
        let n = q.len() as f64;
        let mut best = (-1.0f64, 0usize);
        for k in 0..256 {
            let (c0, c1): (Vec<usize>, Vec<usize>) = q.iter().partition(|&&v| v <= k);
            if c0.is_empty() || c1.is_empty() {
                continue;
            }
            let m0 = c0.iter().sum::<usize>() as f64 / c0.len() as f64;
            let m1 = c1.iter().sum::<usize>() as f64 / c1.len() as f64;
            let var = (c0.len() as f64 / n) * (c1.len() as f64 / n) * (m0 - m1) * (m0 - m1);
            if var > best.0 + 1e-12 {
                best = (var, k);
            }
        }
        ((best.1 as f32 + 0.5) / 255.0).min(1.0)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn otsu_matches_exhaustive_search(data in proptest::collection::vec(0u8..=255, 256)) {
            let f = ScalarField::from_u8(16, 16, &data).unwrap();
            prop_assume!(data.iter().any(|&b| b != data[0]));
            prop_assert_eq!(otsu_threshold(&f), exhaustive_otsu(&f));
        }
    }

    proptest! {
        #[test]
        fn minmax_output_in_unit_range(data in proptest::collection::vec(-3.0f32..3.0, 1..64)) {
            let f = row(&data);
            let n = minmax_normalize(&f);
            prop_assert!(n.data().iter().all(|v| (0.0..=1.0).contains(v)));
            if f.max() > f.min() {
                prop_assert_eq!(n.min(), 0.0);
                prop_assert_eq!(n.max(), 1.0);
            }
        }

        #[test]
        fn clamp_idempotent_and_monotone(a in proptest::collection::vec(-2.0f32..2.0, 16), d in proptest::collection::vec(0.0f32..1.0, 16)) {
            let f = row(&a);
            let once = clamp_nonneg(&f);
            prop_assert_eq!(clamp_nonneg(&once), once.clone());
            let g = row(&a.iter().zip(&d).map(|(x, y)| x + y).collect::<Vec<_>>());
            let cg = clamp_nonneg(&g);
            for (lo, hi) in once.data().iter().zip(cg.data()) {
                prop_assert!(lo <= hi);
            }
        }

        #[test]
        fn resize_stays_in_range(data in proptest::collection::vec(0.0f32..1.0, 12), w in 1usize..9, h in 1usize..9) {
            let f = ScalarField::new(4, 3, data).unwrap();
            let r = resize_bilinear(&f, w, h).unwrap();
            prop_assert!(r.data().iter().all(|&v| v >= f.min() && v <= f.max()));
        }
    }
}
