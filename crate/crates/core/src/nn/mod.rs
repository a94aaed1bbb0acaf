//! Minimal layer library with hand-written backward passes.
//!
//! Activations use NHWC layout (`[batch, height, width, channels]`). Every
//! layer owns its parameters; a value of the same type filled with zeros
//! doubles as its gradient accumulator.

mod conv;
mod dense;
mod residual;

use ndarray::{Array, ArrayD, ArrayViewD, ArrayViewMutD, Dimension, ShapeBuilder, Zip};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::real::Real;

pub use conv::{col2im, conv_out, im2col, Conv2d, ConvCache, ConvTranspose2d, ConvTransposeCache};
pub use dense::{Dense, DenseCache};
pub use residual::{ResidualBlock, ResidualCache};

/// A collection of named parameter tensors visited in a stable order.
pub trait Module<F: Real> {
    fn params(&self) -> Vec<(String, ArrayViewD<'_, F>)>;
    fn params_mut(&mut self) -> Vec<(String, ArrayViewMutD<'_, F>)>;
    /// Same shapes, all zeros. Used as a gradient accumulator.
    fn zeros_like(&self) -> Self
    where
        Self: Sized;

    fn num_params(&self) -> usize {
        self.params().iter().map(|(_, t)| t.len()).sum()
    }

    fn owned_params(&self) -> Vec<(String, ArrayD<F>)> {
        self.params()
            .into_iter()
            .map(|(n, t)| (n, t.to_owned()))
            .collect()
    }

    /// Overwrites every parameter with the value of the same name in `src`.
    fn load_params(&mut self, src: &[(String, ArrayD<F>)]) -> crate::Result<()> {
        for (name, mut dst) in self.params_mut() {
            let (_, t) = src.iter().find(|(n, _)| *n == name).ok_or_else(|| {
                crate::Error::CheckpointMismatch(format!("missing tensor {name}"))
            })?;
            if t.shape() != dst.shape() {
                return Err(crate::Error::CheckpointMismatch(format!(
                    "tensor {name}: expected shape {:?}, found {:?}",
                    dst.shape(),
                    t.shape()
                )));
            }
            dst.assign(t);
        }
        Ok(())
    }
}

pub(crate) fn prefixed<T>(prefix: &str, items: Vec<(String, T)>) -> Vec<(String, T)> {
    items
        .into_iter()
        .map(|(n, t)| (format!("{prefix}.{n}"), t))
        .collect()
}

/// He (fan-in) normal initialisation for ReLU layers, scaled by `gain`.
pub(crate) fn he_normal<F: Real, Sh: ShapeBuilder<Dim = D>, D: Dimension, R: Rng + ?Sized>(
    shape: Sh,
    fan_in: usize,
    gain: f64,
    rng: &mut R,
) -> Array<F, D> {
    let std = gain * (2.0 / fan_in as f64).sqrt();
    let mut a = Array::zeros(shape);
    for v in a.iter_mut() {
        let s: f64 = StandardNormal.sample(rng);
        *v = F::of(s * std);
    }
    a
}

pub fn relu<F: Real, D: Dimension>(x: &Array<F, D>) -> Array<F, D> {
    x.mapv(|v| if v > F::zero() { v } else { F::zero() })
}

/// Gradient of ReLU given the upstream gradient and the activation output.
pub fn relu_backward<F: Real, D: Dimension>(dout: &Array<F, D>, out: &Array<F, D>) -> Array<F, D> {
    let mut d = dout.clone();
    Zip::from(&mut d).and(out).for_each(|g, &y| {
        if y <= F::zero() {
            *g = F::zero();
        }
    });
    d
}
