use ndarray::{Array2, Array4, ArrayView4, ArrayViewD, ArrayViewMutD};
use rand::Rng;

use super::{Architecture, GaussianPosterior};
use crate::nn::{prefixed, relu, relu_backward, Conv2d, ConvCache, Dense, DenseCache, Module, ResidualBlock, ResidualCache};
use crate::real::Real;

/// Groups of `[stride-2 conv -> ReLU -> residual block]`, then two dense
/// heads for the mean and log-variance.
#[derive(Clone, Debug)]
pub struct Encoder<F> {
    pub downs: Vec<Conv2d<F>>,
    pub blocks: Vec<ResidualBlock<F>>,
    pub mu_head: Dense<F>,
    pub log_var_head: Dense<F>,
}

pub struct EncoderCache<F> {
    downs: Vec<ConvCache<F>>,
    acts: Vec<Array4<F>>,
    blocks: Vec<ResidualCache<F>>,
    flat_shape: (usize, usize, usize, usize),
    mu: DenseCache<F>,
    log_var: DenseCache<F>,
}

/// Initial scale of the mean/log-variance heads relative to He.
const HEAD_GAIN: f64 = 0.01;

impl<F: Real> Encoder<F> {
    pub fn new<R: Rng + ?Sized>(arch: &Architecture, rng: &mut R) -> Self {
        let mut downs = Vec::new();
        let mut blocks = Vec::new();
        let mut c_in = arch.channels;
        for &f in &arch.filters {
            downs.push(Conv2d::new(c_in, f, 3, 2, 1, rng));
            if arch.residual {
                blocks.push(ResidualBlock::new(f, rng));
            }
            c_in = f;
        }
        let side = *arch.spatial_sizes(arch.filters.len()).last().expect("nonempty");
        let flat = side * side * c_in;
        Self {
            downs,
            blocks,
            mu_head: Dense::new(flat, arch.latent_dim, HEAD_GAIN, rng),
            log_var_head: Dense::new(flat, arch.latent_dim, HEAD_GAIN, rng),
        }
    }

    pub fn forward(&self, x: ArrayView4<'_, F>) -> (GaussianPosterior<F>, EncoderCache<F>) {
        let mut downs = Vec::with_capacity(self.downs.len());
        let mut acts = Vec::with_capacity(self.downs.len());
        let mut blocks = Vec::with_capacity(self.blocks.len());
        let mut h: Option<Array4<F>> = None;
        for (g, conv) in self.downs.iter().enumerate() {
            let input = h.as_ref().map_or(x.view(), |a| a.view());
            let (pre, c) = conv.forward(input);
            downs.push(c);
            let a = relu(&pre);
            let next = match self.blocks.get(g) {
                Some(block) => {
                    let (y, rc) = block.forward(a.view());
                    blocks.push(rc);
                    y
                }
                None => a.clone(),
            };
            acts.push(a);
            h = Some(next);
        }
        let h = h.expect("at least one group");
        let flat_shape = h.dim();
        let (m, s1, s2, c) = flat_shape;
        let flat = h.into_shape_with_order((m, s1 * s2 * c)).expect("contiguous");
        let (mu, mu_c) = self.mu_head.forward(flat.view());
        let (log_var, lv_c) = self.log_var_head.forward(flat.view());
        (
            GaussianPosterior { mu, log_var },
            EncoderCache {
                downs,
                acts,
                blocks,
                flat_shape,
                mu: mu_c,
                log_var: lv_c,
            },
        )
    }

    /// Accumulates parameter gradients given the gradients of the loss with
    /// respect to `mu` and `log_var`. The image gradient is not needed.
    pub fn backward(&self, cache: &EncoderCache<F>, dmu: &Array2<F>, dlog_var: &Array2<F>, grads: &mut Self) {
        let dflat = self
            .mu_head
            .backward(&cache.mu, dmu.view(), &mut grads.mu_head, true)
            .expect("input gradient")
            + self
                .log_var_head
                .backward(&cache.log_var, dlog_var.view(), &mut grads.log_var_head, true)
                .expect("input gradient");
        let mut dh = dflat
            .into_shape_with_order(cache.flat_shape)
            .expect("contiguous");
        for g in (0..self.downs.len()).rev() {
            if let Some(block) = self.blocks.get(g) {
                dh = block.backward(&cache.blocks[g], &dh, &mut grads.blocks[g]);
            }
            let dpre = relu_backward(&dh, &cache.acts[g]);
            match self.downs[g].backward(&cache.downs[g], dpre.view(), &mut grads.downs[g], g > 0) {
                Some(d) => dh = d,
                None => break,
            }
        }
    }
}

impl<F: Real> Module<F> for Encoder<F> {
    fn params(&self) -> Vec<(String, ArrayViewD<'_, F>)> {
        let mut v = Vec::new();
        for (g, conv) in self.downs.iter().enumerate() {
            v.extend(prefixed(&format!("down{g}"), conv.params()));
            if let Some(b) = self.blocks.get(g) {
                v.extend(prefixed(&format!("res{g}"), b.params()));
            }
        }
        v.extend(prefixed("mu", self.mu_head.params()));
        v.extend(prefixed("log_var", self.log_var_head.params()));
        v
    }

    fn params_mut(&mut self) -> Vec<(String, ArrayViewMutD<'_, F>)> {
        let mut v = Vec::new();
        let mut blocks = self.blocks.iter_mut();
        for (g, conv) in self.downs.iter_mut().enumerate() {
            v.extend(prefixed(&format!("down{g}"), conv.params_mut()));
            if let Some(b) = blocks.next() {
                v.extend(prefixed(&format!("res{g}"), b.params_mut()));
            }
        }
        v.extend(prefixed("mu", self.mu_head.params_mut()));
        v.extend(prefixed("log_var", self.log_var_head.params_mut()));
        v
    }

    fn zeros_like(&self) -> Self {
        Self {
            downs: self.downs.iter().map(Module::zeros_like).collect(),
            blocks: self.blocks.iter().map(Module::zeros_like).collect(),
            mu_head: self.mu_head.zeros_like(),
            log_var_head: self.log_var_head.zeros_like(),
        }
    }
}
