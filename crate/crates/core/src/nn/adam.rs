use alloc::format;

use alloc::string::String;

use super::net::{Module, Slot};
use super::param::Param;
use crate::error::{Error, Result};

/// Adam with bias correction.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    step: u32,
}

impl Adam {
    pub fn new(lr: f32) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
        }
    }

    pub fn steps(&self) -> u32 {
        self.step
    }

    /// Applies one update to every parameter of `module`. Gradients are
    /// validated first, so a failed step leaves all state intact.
    pub fn step(&mut self, module: &mut dyn Module) -> Result<()> {
        let mut bad: Option<String> = None;
        module.visit("", &mut |name, slot| {
            if let Slot::Param(p) = slot {
                if bad.is_none() && p.grad().iter().any(|g| !g.is_finite()) {
                    bad = Some(String::from(name));
                }
            }
        });
        if let Some(name) = bad {
            return Err(Error::NonFinite(format!("gradient of {name}")));
        }
        self.step += 1;
        let t = self.step as f32;
        let c1 = 1.0 - libm::powf(self.beta1, t);
        let c2 = 1.0 - libm::powf(self.beta2, t);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
        module.visit("", &mut |_, slot| {
            if let Slot::Param(p) = slot {
                update(p, b1, b2, lr, eps, c1, c2);
            }
        });
        Ok(())
    }
}

fn update(p: &mut Param, b1: f32, b2: f32, lr: f32, eps: f32, c1: f32, c2: f32) {
    let Param { value, m, v } = p;
    let (vals, grad) = value.split_mut();
    let grad = grad.expect("parameters always carry a gradient");
    for i in 0..vals.len() {
        let g = grad[i];
        m[i] = b1 * m[i] + (1.0 - b1) * g;
        v[i] = b2 * v[i] + (1.0 - b2) * g * g;
        vals[i] -= lr * (m[i] / c1) / (libm::sqrtf(v[i] / c2) + eps);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::tensor::Tensor4;
    use alloc::vec;
    use alloc::vec::Vec;

    struct Named(&'static str, Param);

    impl Module for Named {
        fn visit(&mut self, _prefix: &str, f: &mut dyn FnMut(&str, Slot<'_>)) {
            f(self.0, Slot::Param(&mut self.1));
        }
    }

    fn scalar(v: f32) -> Named {
        Named(
            "p",
            Param::new(Tensor4::from_vec([1, 1, 1, 1], vec![v]).unwrap()),
        )
    }

    #[test]
    fn zero_gradient_and_zero_lr_leave_params() {
        let mut p = scalar(0.3);
        let mut opt = Adam::new(1e-4);
        opt.step(&mut p).unwrap();
        assert_eq!(p.1.value.data()[0], 0.3);

        let mut p = scalar(0.3);
        p.1.accumulate(&[2.0]);
        let mut opt = Adam::new(0.0);
        opt.step(&mut p).unwrap();
        assert_eq!(p.1.value.data()[0], 0.3);
    }

    #[test]
    fn constant_gradient_matches_recursion() {
        let g = 0.37f64;
        let lr = 1e-2f64;
        let mut p = scalar(1.0);
        let mut opt = Adam::new(lr as f32);
        let (mut m, mut v, mut theta) = (0.0f64, 0.0f64, 1.0f64);
        let mut traj = Vec::new();
        for t in 1..=25 {
            p.1.zero_grad();
            p.1.accumulate(&[g as f32]);
            opt.step(&mut p).unwrap();
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            let mh = m / (1.0 - 0.9f64.powi(t));
            let vh = v / (1.0 - 0.999f64.powi(t));
            theta -= lr * mh / (vh.sqrt() + 1e-8);
            traj.push((p.1.value.data()[0], theta));
        }
        for (a, e) in traj {
            assert!((f64::from(a) - e).abs() < 1e-5, "{a} vs {e}");
        }
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let mut p = scalar(0.0);
        p.0 = "head.w";
        p.1.accumulate(&[f32::NAN]);
        let err = Adam::new(1e-3).step(&mut p).unwrap_err();
        assert_eq!(err, Error::NonFinite("gradient of head.w".into()));
        assert_eq!(p.1.value.data()[0], 0.0);
    }
}
