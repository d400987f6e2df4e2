use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::field::{RgbImage, ScalarField};

/// Dense N×C×H×W array of 32-bit reals with an optional gradient buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor4 {
    shape: [usize; 4],
    data: Vec<f32>,
    grad: Option<Vec<f32>>,
}

impl Tensor4 {
    pub fn zeros(shape: [usize; 4]) -> Self {
        Self {
            shape,
            data: vec![0.0; shape.iter().product()],
            grad: None,
        }
    }

    pub fn filled(shape: [usize; 4], value: f32) -> Self {
        Self {
            shape,
            data: vec![value; shape.iter().product()],
            grad: None,
        }
    }

    pub fn from_vec(shape: [usize; 4], data: Vec<f32>) -> Result<Self> {
        if data.len() != shape.iter().product::<usize>() {
            return Err(Error::Shape {
                op: "tensor construction",
                left: shape,
                right: [data.len(), 1, 1, 1],
            });
        }
        Ok(Self {
            shape,
            data,
            grad: None,
        })
    }

    /// Attaches a zeroed gradient buffer.
    pub fn with_grad(mut self) -> Self {
        self.grad = Some(vec![0.0; self.data.len()]);
        self
    }

    pub fn shape(&self) -> [usize; 4] {
        self.shape
    }

    pub fn n(&self) -> usize {
        self.shape[0]
    }

    pub fn c(&self) -> usize {
        self.shape[1]
    }

    pub fn h(&self) -> usize {
        self.shape[2]
    }

    pub fn w(&self) -> usize {
        self.shape[3]
    }

    /// Elements in one H×W plane.
    pub fn plane_len(&self) -> usize {
        self.shape[2] * self.shape[3]
    }

    /// Elements in one sample (C×H×W).
    pub fn sample_len(&self) -> usize {
        self.shape[1] * self.plane_len()
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

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn grad(&self) -> Option<&[f32]> {
        self.grad.as_deref()
    }

    pub fn grad_mut(&mut self) -> Option<&mut [f32]> {
        self.grad.as_deref_mut()
    }

    /// Value and gradient slices at once.
    pub fn split_mut(&mut self) -> (&mut [f32], Option<&mut [f32]>) {
        (&mut self.data, self.grad.as_deref_mut())
    }

    pub fn zero_grad(&mut self) {
        if let Some(g) = &mut self.grad {
            g.fill(0.0);
        }
    }

    pub fn plane(&self, n: usize, c: usize) -> &[f32] {
        let start = (n * self.shape[1] + c) * self.plane_len();
        &self.data[start..start + self.plane_len()]
    }

    pub fn plane_mut(&mut self, n: usize, c: usize) -> &mut [f32] {
        let len = self.plane_len();
        let start = (n * self.shape[1] + c) * len;
        &mut self.data[start..start + len]
    }

    pub fn sample(&self, n: usize) -> &[f32] {
        let len = self.sample_len();
        &self.data[n * len..(n + 1) * len]
    }

    pub fn sample_mut(&mut self, n: usize) -> &mut [f32] {
        let len = self.sample_len();
        &mut self.data[n * len..(n + 1) * len]
    }

    pub fn check_same_shape(&self, other: &Tensor4, op: &'static str) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::Shape {
                op,
                left: self.shape,
                right: other.shape,
            });
        }
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
            && self
                .grad
                .as_ref()
                .is_none_or(|g| g.iter().all(|v| v.is_finite()))
    }

    /// Applies `f` to every value; drops the gradient buffer.
    pub fn map_values(&self, f: impl Fn(f32) -> f32) -> Tensor4 {
        Tensor4 {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
            grad: None,
        }
    }

    /// Elementwise sum of two same-shaped tensors.
    pub fn add(&self, other: &Tensor4) -> Result<Tensor4> {
        self.check_same_shape(other, "add")?;
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a + b)
            .collect();
        Tensor4::from_vec(self.shape, data)
    }

    /// Stacks same-shaped single-sample tensors along N.
    pub fn stack(items: &[Tensor4]) -> Result<Tensor4> {
        let first = items
            .first()
            .ok_or_else(|| Error::InvalidParameter("empty stack".into()))?;
        let [_, c, h, w] = first.shape;
        let mut data = Vec::with_capacity(items.len() * c * h * w);
        for t in items {
            if t.shape != [1, c, h, w] {
                return Err(Error::Shape {
                    op: "stack",
                    left: first.shape,
                    right: t.shape,
                });
            }
            data.extend_from_slice(&t.data);
        }
        Tensor4::from_vec([items.len(), c, h, w], data)
    }
}

/// Slice-wise `y[i] += a * x[i]`.
#[inline]
pub(crate) fn axpy(y: &mut [f32], a: f32, x: &[f32]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// Dot product with eight independent accumulators so the loop vectorizes.
#[inline]
pub(crate) fn dot(a: &[f32], b: &[f32]) -> f32 {
    let mut acc = [0.0f32; 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for k in 0..8 {
            acc[k] += x[k] * y[k];
        }
    }
    let mut s = acc.iter().sum::<f32>();
    for (x, y) in ra.iter().zip(rb) {
        s += x * y;
    }
    s
}

#[inline]
pub(crate) fn sum(a: &[f32]) -> f32 {
    let mut acc = [0.0f32; 8];
    let ca = a.chunks_exact(8);
    let r = ca.remainder();
    for x in ca {
        for k in 0..8 {
            acc[k] += x[k];
        }
    }
    acc.iter().sum::<f32>() + r.iter().sum::<f32>()
}

/// Stacks RGB images into an N×3×H×W tensor.
pub fn stack_rgb(images: &[&RgbImage]) -> Result<Tensor4> {
    let first = images
        .first()
        .ok_or_else(|| Error::InvalidParameter("empty batch".into()))?;
    let (w, h) = first.dims();
    let mut data = Vec::with_capacity(images.len() * 3 * w * h);
    for img in images {
        if img.dims() != (w, h) {
            return Err(Error::Dimensions {
                expected: (w, h),
                found: img.dims(),
            });
        }
        for c in 0..3 {
            data.extend_from_slice(img.plane(c));
        }
    }
    Tensor4::from_vec([images.len(), 3, h, w], data)
}

/// Stacks scalar fields into an N×1×H×W tensor.
pub fn stack_fields(fields: &[&ScalarField]) -> Result<Tensor4> {
    let first = fields
        .first()
        .ok_or_else(|| Error::InvalidParameter("empty batch".into()))?;
    let (w, h) = first.dims();
    let mut data = Vec::with_capacity(fields.len() * w * h);
    for f in fields {
        first.check_dims(f)?;
        data.extend_from_slice(f.data());
    }
    Tensor4::from_vec([fields.len(), 1, h, w], data)
}

/// Splits channel `c` of every sample into scalar fields.
pub fn unstack_channel(t: &Tensor4, c: usize) -> Result<Vec<ScalarField>> {
    (0..t.n())
        .map(|n| ScalarField::new(t.w(), t.h(), t.plane(n, c).to_vec()))
        .collect()
}
