use ndarray::{Array4, ArrayView4, ArrayViewD, ArrayViewMutD};
use rand::Rng;

use super::{prefixed, relu, relu_backward, Conv2d, ConvCache, Module};
use crate::real::Real;

/// Two stride-1 3x3 convolutions with an identity skip:
/// `y = relu(x + conv2(relu(conv1(x))))`.
#[derive(Clone, Debug)]
pub struct ResidualBlock<F> {
    pub conv1: Conv2d<F>,
    pub conv2: Conv2d<F>,
}

#[derive(Clone, Debug)]
pub struct ResidualCache<F> {
    c1: ConvCache<F>,
    a1: Array4<F>,
    c2: ConvCache<F>,
    out: Array4<F>,
}

impl<F: Real> ResidualBlock<F> {
    pub fn new<R: Rng + ?Sized>(channels: usize, rng: &mut R) -> Self {
        Self {
            conv1: Conv2d::new(channels, channels, 3, 1, 1, rng),
            conv2: Conv2d::new(channels, channels, 3, 1, 1, rng),
        }
    }

    pub fn forward(&self, x: ArrayView4<'_, F>) -> (Array4<F>, ResidualCache<F>) {
        let (h1, c1) = self.conv1.forward(x);
        let a1 = relu(&h1);
        let (h2, c2) = self.conv2.forward(a1.view());
        let out = relu(&(h2 + x));
        (
            out.clone(),
            ResidualCache { c1, a1, c2, out },
        )
    }

    pub fn backward(
        &self,
        cache: &ResidualCache<F>,
        dout: &Array4<F>,
        grads: &mut Self,
    ) -> Array4<F> {
        let ds = relu_backward(dout, &cache.out);
        let da1 = self
            .conv2
            .backward(&cache.c2, ds.view(), &mut grads.conv2, true)
            .expect("input gradient");
        let dh1 = relu_backward(&da1, &cache.a1);
        let dx = self
            .conv1
            .backward(&cache.c1, dh1.view(), &mut grads.conv1, true)
            .expect("input gradient");
        dx + ds
    }
}

impl<F: Real> Module<F> for ResidualBlock<F> {
    fn params(&self) -> Vec<(String, ArrayViewD<'_, F>)> {
        let mut v = prefixed("conv1", self.conv1.params());
        v.extend(prefixed("conv2", self.conv2.params()));
        v
    }

    fn params_mut(&mut self) -> Vec<(String, ArrayViewMutD<'_, F>)> {
        let mut v = prefixed("conv1", self.conv1.params_mut());
        v.extend(prefixed("conv2", self.conv2.params_mut()));
        v
    }

    fn zeros_like(&self) -> Self {
        Self {
            conv1: self.conv1.zeros_like(),
            conv2: self.conv2.zeros_like(),
        }
    }
}
