use alloc::vec;
use alloc::vec::Vec;

use super::tensor::Tensor4;

/// Trainable tensor with its gradient slot and Adam moment buffers.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub value: Tensor4,
    pub(crate) m: Vec<f32>,
    pub(crate) v: Vec<f32>,
}

impl Param {
    pub fn new(value: Tensor4) -> Self {
        let n = value.len();
        Self {
            value: value.with_grad(),
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }

    pub fn grad(&self) -> &[f32] {
        self.value
            .grad()
            .expect("parameters always carry a gradient")
    }

    pub fn zero_grad(&mut self) {
        self.value.zero_grad();
    }

    pub fn accumulate(&mut self, g: &[f32]) {
        let grad = self
            .value
            .grad_mut()
            .expect("parameters always carry a gradient");
        for (a, b) in grad.iter_mut().zip(g) {
            *a += b;
        }
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }
}
