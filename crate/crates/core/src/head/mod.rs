//! Dense embedding head, pairwise similarity distributions, and the k-means
//! finisher.

pub mod kmeans;
pub mod similarity;

use ndarray::{Array2, ArrayView2, ArrayViewD, ArrayViewMutD, Zip};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::nn::{prefixed, relu, relu_backward, Dense, DenseCache, Module};
use crate::real::Real;
use crate::{Error, Result};

pub use kmeans::{kmeans, ClusterResult, KMeansConfig};
pub use similarity::{clustering_loss, clustering_loss_grad, pairwise_p, pairwise_q, ClusteringLossGrad, SimilarityMatrix};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeadConfig {
    pub input_dim: usize,
    /// Hidden widths; the head has `hidden.len() + 1` dense layers.
    pub hidden: Vec<usize>,
    pub embedding_dim: usize,
    pub dropout_rate: f64,
    pub l2: f64,
}

impl HeadConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config(format!(
                "dropout rate must lie in [0, 1), got {}",
                self.dropout_rate
            )));
        }
        if !(self.l2 >= 0.0) {
            return Err(Error::Config(format!("l2 must be >= 0, got {}", self.l2)));
        }
        if self.input_dim == 0 || self.embedding_dim == 0 || self.hidden.contains(&0) {
            return Err(Error::Config("head widths must be positive".into()));
        }
        Ok(())
    }
}

/// Maps latent means to embeddings: ReLU + dropout after every layer but
/// the last.
#[derive(Clone, Debug)]
pub struct EmbeddingHead<F> {
    pub layers: Vec<Dense<F>>,
    pub dropout_rate: f64,
    pub l2: f64,
}

pub struct HeadCache<F> {
    layers: Vec<DenseCache<F>>,
    acts: Vec<Array2<F>>,
    masks: Vec<Option<Array2<F>>>,
}

impl<F: Real> EmbeddingHead<F> {
    pub fn new<R: Rng + ?Sized>(cfg: &HeadConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let mut widths = vec![cfg.input_dim];
        widths.extend(&cfg.hidden);
        widths.push(cfg.embedding_dim);
        let layers = widths
            .windows(2)
            .map(|w| Dense::new(w[0], w[1], 1.0, rng))
            .collect();
        Ok(Self {
            layers,
            dropout_rate: cfg.dropout_rate,
            l2: cfg.l2,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn embedding_dim(&self) -> usize {
        self.layers.last().expect("nonempty").outputs()
    }

    /// `rng` switches on training mode (inverted dropout); `None` is
    /// deterministic inference.
    pub fn forward<R: Rng + ?Sized>(
        &self,
        mu: ArrayView2<'_, F>,
        mut rng: Option<&mut R>,
    ) -> Result<(Array2<F>, HeadCache<F>)> {
        if mu.ncols() != self.input_dim() {
            return Err(Error::Shape(format!(
                "head expects width {}, got {}",
                self.input_dim(),
                mu.ncols()
            )));
        }
        let n = self.layers.len();
        let mut caches = Vec::with_capacity(n);
        let mut acts = Vec::with_capacity(n);
        let mut masks = Vec::with_capacity(n);
        let mut h = mu.to_owned();
        for (i, layer) in self.layers.iter().enumerate() {
            let (y, c) = layer.forward(h.view());
            caches.push(c);
            if i + 1 == n {
                h = y;
                break;
            }
            let a = relu(&y);
            let mask = match rng.as_deref_mut() {
                Some(r) if self.dropout_rate > 0.0 => {
                    let keep = 1.0 - self.dropout_rate;
                    let scale = F::of(1.0 / keep);
                    Some(a.mapv(|_| if r.random::<f64>() < keep { scale } else { F::zero() }))
                }
                _ => None,
            };
            h = match &mask {
                Some(m) => &a * m,
                None => a.clone(),
            };
            acts.push(a);
            masks.push(mask);
        }
        Ok((
            h,
            HeadCache {
                layers: caches,
                acts,
                masks,
            },
        ))
    }

    pub fn embed(&self, mu: ArrayView2<'_, F>) -> Result<Array2<F>> {
        Ok(self.forward::<rand_chacha::ChaCha8Rng>(mu, None)?.0)
    }

    pub fn backward(&self, cache: &HeadCache<F>, dc: &Array2<F>, grads: &mut Self) -> Array2<F> {
        let n = self.layers.len();
        let mut dh = dc.clone();
        for i in (0..n).rev() {
            if i + 1 < n {
                if let Some(m) = &cache.masks[i] {
                    dh = &dh * m;
                }
                dh = relu_backward(&dh, &cache.acts[i]);
            }
            dh = self.layers[i]
                .backward(&cache.layers[i], dh.view(), &mut grads.layers[i], true)
                .expect("input gradient");
        }
        dh
    }

    /// `l2 * sum(W^2)` over the dense weight matrices (biases excluded).
    pub fn l2_penalty(&self) -> F {
        let s: F = self
            .layers
            .iter()
            .map(|l| l.weight.iter().map(|&w| w * w).sum::<F>())
            .sum();
        F::of(self.l2) * s
    }

    pub fn add_l2_grad(&self, grads: &mut Self) {
        let c = F::of(2.0 * self.l2);
        for (l, g) in self.layers.iter().zip(grads.layers.iter_mut()) {
            Zip::from(&mut g.weight).and(&l.weight).for_each(|g, &w| *g += c * w);
        }
    }
}

impl<F: Real> Module<F> for EmbeddingHead<F> {
    fn params(&self) -> Vec<(String, ArrayViewD<'_, F>)> {
        self.layers
            .iter()
            .enumerate()
            .flat_map(|(i, l)| prefixed(&format!("dense{i}"), l.params()))
            .collect()
    }

    fn params_mut(&mut self) -> Vec<(String, ArrayViewMutD<'_, F>)> {
        self.layers
            .iter_mut()
            .enumerate()
            .flat_map(|(i, l)| prefixed(&format!("dense{i}"), l.params_mut()))
            .collect()
    }

    fn zeros_like(&self) -> Self {
        Self {
            layers: self.layers.iter().map(Module::zeros_like).collect(),
            dropout_rate: self.dropout_rate,
            l2: self.l2,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cfg() -> HeadConfig {
        HeadConfig {
            input_dim: 50,
            hidden: vec![500, 500, 2000],
            embedding_dim: 10,
            dropout_rate: 0.3,
            l2: 1e-4,
        }
    }

    #[test]
    fn inference_is_deterministic_and_shaped() {
        let head = EmbeddingHead::<f32>::new(&cfg(), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let mu = Array2::from_shape_fn((256, 50), |(i, j)| ((i * 7 + j) % 13) as f32 / 13.0);
        let a = head.embed(mu.view()).unwrap();
        let b = head.embed(mu.view()).unwrap();
        assert_eq!(a.dim(), (256, 10));
        assert_eq!(a, b);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (t, _) = head.forward(mu.view(), Some(&mut rng)).unwrap();
        assert_ne!(t, a);
    }

    #[test]
    fn width_mismatch_is_a_shape_error() {
        let head = EmbeddingHead::<f32>::new(&cfg(), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let mu = Array2::zeros((2, 49));
        assert!(matches!(head.embed(mu.view()), Err(Error::Shape(_))));
    }

    #[test]
    fn dropout_keeps_the_expected_fraction() {
        let c = HeadConfig {
            input_dim: 4,
            hidden: vec![2000],
            embedding_dim: 2,
            dropout_rate: 0.3,
            l2: 0.0,
        };
        let head = EmbeddingHead::<f64>::new(&c, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let mu = Array2::from_elem((50, 4), 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (_, cache) = head.forward(mu.view(), Some(&mut rng)).unwrap();
        let mask = cache.masks[0].as_ref().unwrap();
        let kept = mask.iter().filter(|&&m| m > 0.0).count() as f64 / mask.len() as f64;
        assert!((kept - 0.7).abs() < 0.01, "{kept}");
        assert!(mask.iter().all(|&m| m == 0.0 || (m - 1.0 / 0.7).abs() < 1e-12));
    }

    #[test]
    fn rejects_bad_dropout() {
        let mut c = cfg();
        c.dropout_rate = 1.0;
        assert!(EmbeddingHead::<f32>::new(&c, &mut ChaCha8Rng::seed_from_u64(1)).is_err());
    }
}
