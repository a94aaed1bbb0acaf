use ndarray::{Array1, Array2, Array4, ArrayView4, ArrayViewD, ArrayViewMutD, Axis};
use rand::Rng;

use super::Architecture;
use crate::nn::{prefixed, relu, relu_backward, Conv2d, ConvCache, Dense, DenseCache, Module};
use crate::real::Real;

/// Plain stride-2 conv + ReLU stack (no residual blocks) and one output logit.
#[derive(Clone, Debug)]
pub struct Discriminator<F> {
    pub convs: Vec<Conv2d<F>>,
    pub out: Dense<F>,
}

pub struct DiscriminatorCache<F> {
    convs: Vec<ConvCache<F>>,
    acts: Vec<Array4<F>>,
    out: DenseCache<F>,
}

impl<F: Real> Discriminator<F> {
    pub fn new<R: Rng + ?Sized>(arch: &Architecture, rng: &mut R) -> Self {
        let mut convs = Vec::new();
        let mut c_in = arch.channels;
        for &f in &arch.discriminator_filters {
            convs.push(Conv2d::new(c_in, f, 3, 2, 1, rng));
            c_in = f;
        }
        let side = *arch
            .spatial_sizes(arch.discriminator_filters.len())
            .last()
            .expect("nonempty");
        Self {
            convs,
            out: Dense::new(side * side * c_in, 1, 0.5, rng),
        }
    }

    pub fn forward(&self, x: ArrayView4<'_, F>) -> (Array1<F>, DiscriminatorCache<F>) {
        let mut convs = Vec::with_capacity(self.convs.len());
        let mut acts: Vec<Array4<F>> = Vec::with_capacity(self.convs.len());
        for conv in &self.convs {
            let input = acts.last().map_or(x.view(), |a| a.view());
            let (pre, c) = conv.forward(input);
            convs.push(c);
            acts.push(relu(&pre));
        }
        let last = acts.last().expect("at least one conv");
        let (m, h, w, c) = last.dim();
        let flat = last
            .view()
            .into_shape_with_order((m, h * w * c))
            .expect("contiguous");
        let (logit, oc) = self.out.forward(flat);
        (
            logit.index_axis_move(Axis(1), 0),
            DiscriminatorCache {
                convs,
                acts,
                out: oc,
            },
        )
    }

    /// Accumulates parameter gradients; returns the image gradient when asked.
    pub fn backward(
        &self,
        cache: &DiscriminatorCache<F>,
        dlogits: &Array1<F>,
        grads: &mut Self,
        input_grad: bool,
    ) -> Option<Array4<F>> {
        let m = dlogits.len();
        let d2: Array2<F> = dlogits.clone().insert_axis(Axis(1));
        let dflat = self
            .out
            .backward(&cache.out, d2.view(), &mut grads.out, true)
            .expect("input gradient");
        let shape = cache.acts.last().expect("nonempty").dim();
        debug_assert_eq!(shape.0, m);
        let mut dh = dflat.into_shape_with_order(shape).expect("contiguous");
        for g in (0..self.convs.len()).rev() {
            let dpre = relu_backward(&dh, &cache.acts[g]);
            let need = g > 0 || input_grad;
            dh = self.convs[g].backward(&cache.convs[g], dpre.view(), &mut grads.convs[g], need)?;
        }
        Some(dh)
    }
}

impl<F: Real> Module<F> for Discriminator<F> {
    fn params(&self) -> Vec<(String, ArrayViewD<'_, F>)> {
        let mut v = Vec::new();
        for (i, c) in self.convs.iter().enumerate() {
            v.extend(prefixed(&format!("conv{i}"), c.params()));
        }
        v.extend(prefixed("out", self.out.params()));
        v
    }

    fn params_mut(&mut self) -> Vec<(String, ArrayViewMutD<'_, F>)> {
        let mut v = Vec::new();
        for (i, c) in self.convs.iter_mut().enumerate() {
            v.extend(prefixed(&format!("conv{i}"), c.params_mut()));
        }
        v.extend(prefixed("out", self.out.params_mut()));
        v
    }

    fn zeros_like(&self) -> Self {
        Self {
            convs: self.convs.iter().map(Module::zeros_like).collect(),
            out: self.out.zeros_like(),
        }
    }
}
