use ndarray::{Array2, Array4, ArrayView2, ArrayViewD, ArrayViewMutD};
use rand::Rng;

use super::Architecture;
use crate::nn::{
    prefixed, relu, relu_backward, ConvTranspose2d, ConvTransposeCache, Dense, DenseCache, Module,
    ResidualBlock, ResidualCache,
};
use crate::real::Real;

/// Mirror of the encoder: dense projection to the smallest feature map, then
/// per group `[residual block -> stride-2 transposed conv -> ReLU]`, the last
/// transposed conv producing pre-sigmoid logits for every pixel.
#[derive(Clone, Debug)]
pub struct Decoder<F> {
    pub project: Dense<F>,
    /// Indexed like the encoder groups; `blocks[g]` runs at `filters[g]`.
    pub blocks: Vec<ResidualBlock<F>>,
    /// `ups[g]` maps `filters[g]` to `filters[g - 1]` (image channels for 0).
    pub ups: Vec<ConvTranspose2d<F>>,
    sizes: Vec<usize>,
}

pub struct DecoderCache<F> {
    project: DenseCache<F>,
    projected: Array4<F>,
    blocks: Vec<Option<ResidualCache<F>>>,
    ups: Vec<ConvTransposeCache<F>>,
    acts: Vec<Option<Array4<F>>>,
}

impl<F: Real> Decoder<F> {
    pub fn new<R: Rng + ?Sized>(arch: &Architecture, rng: &mut R) -> Self {
        let groups = arch.filters.len();
        let sizes = arch.spatial_sizes(groups);
        let last = *arch.filters.last().expect("nonempty");
        let side = sizes[groups];
        let project = Dense::new(arch.latent_dim, side * side * last, 1.0, rng);
        let mut blocks = Vec::new();
        let mut ups = Vec::new();
        for g in 0..groups {
            if arch.residual {
                blocks.push(ResidualBlock::new(arch.filters[g], rng));
            }
            let c_out = if g == 0 { arch.channels } else { arch.filters[g - 1] };
            ups.push(ConvTranspose2d::new(arch.filters[g], c_out, 3, 2, 1, rng));
        }
        Self {
            project,
            blocks,
            ups,
            sizes,
        }
    }

    /// Returns pixel logits `[M, canvas, canvas, channels]`.
    pub fn forward(&self, z: ArrayView2<'_, F>) -> (Array4<F>, DecoderCache<F>) {
        let groups = self.ups.len();
        let (p, pc) = self.project.forward(z);
        let side = self.sizes[groups];
        let m = z.nrows();
        let c = self.ups[groups - 1].in_channels();
        let projected = relu(&p)
            .into_shape_with_order((m, side, side, c))
            .expect("contiguous");
        let mut blocks: Vec<Option<ResidualCache<F>>> = (0..groups).map(|_| None).collect();
        let mut ups_c: Vec<Option<ConvTransposeCache<F>>> = (0..groups).map(|_| None).collect();
        let mut acts: Vec<Option<Array4<F>>> = (0..groups).map(|_| None).collect();
        let mut h = projected.clone();
        for g in (0..groups).rev() {
            if let Some(block) = self.blocks.get(g) {
                let (y, rc) = block.forward(h.view());
                blocks[g] = Some(rc);
                h = y;
            }
            let out = self.sizes[g];
            let (y, uc) = self.ups[g].forward(h.view(), (out, out));
            ups_c[g] = Some(uc);
            h = if g > 0 {
                let a = relu(&y);
                acts[g] = Some(a.clone());
                a
            } else {
                y
            };
        }
        (
            h,
            DecoderCache {
                project: pc,
                projected,
                blocks,
                ups: ups_c.into_iter().map(|c| c.expect("filled")).collect(),
                acts,
            },
        )
    }

    /// Backpropagates the logit gradient; returns the gradient for `z`.
    pub fn backward(&self, cache: &DecoderCache<F>, dlogits: &Array4<F>, grads: &mut Self) -> Array2<F> {
        let groups = self.ups.len();
        let mut dh = dlogits.clone();
        for g in 0..groups {
            if let Some(a) = &cache.acts[g] {
                dh = relu_backward(&dh, a);
            }
            dh = self.ups[g]
                .backward(&cache.ups[g], dh.view(), &mut grads.ups[g], true)
                .expect("input gradient");
            if let (Some(block), Some(rc)) = (self.blocks.get(g), &cache.blocks[g]) {
                dh = block.backward(rc, &dh, &mut grads.blocks[g]);
            }
        }
        let dp = relu_backward(&dh, &cache.projected);
        let m = dp.dim().0;
        let dp = dp
            .into_shape_with_order((m, self.project.outputs()))
            .expect("contiguous");
        self.project
            .backward(&cache.project, dp.view(), &mut grads.project, true)
            .expect("input gradient")
    }
}

impl<F: Real> Module<F> for Decoder<F> {
    fn params(&self) -> Vec<(String, ArrayViewD<'_, F>)> {
        let mut v = prefixed("project", self.project.params());
        for g in (0..self.ups.len()).rev() {
            if let Some(b) = self.blocks.get(g) {
                v.extend(prefixed(&format!("res{g}"), b.params()));
            }
            v.extend(prefixed(&format!("up{g}"), self.ups[g].params()));
        }
        v
    }

    fn params_mut(&mut self) -> Vec<(String, ArrayViewMutD<'_, F>)> {
        let mut v = prefixed("project", self.project.params_mut());
        let mut blocks: Vec<Option<&mut ResidualBlock<F>>> = self.blocks.iter_mut().map(Some).collect();
        blocks.resize_with(self.ups.len(), || None);
        let mut pairs: Vec<_> = self.ups.iter_mut().zip(blocks).enumerate().collect();
        pairs.reverse();
        for (g, (up, block)) in pairs {
            if let Some(b) = block {
                v.extend(prefixed(&format!("res{g}"), b.params_mut()));
            }
            v.extend(prefixed(&format!("up{g}"), up.params_mut()));
        }
        v
    }

    fn zeros_like(&self) -> Self {
        Self {
            project: self.project.zeros_like(),
            blocks: self.blocks.iter().map(Module::zeros_like).collect(),
            ups: self.ups.iter().map(Module::zeros_like).collect(),
            sizes: self.sizes.clone(),
        }
    }
}
