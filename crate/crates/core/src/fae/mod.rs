//! The fusion autoencoder: a Gaussian-posterior encoder, a Bernoulli decoder
//! that doubles as the generator, and an image discriminator.

mod decoder;
mod discriminator;
mod encoder;
pub mod loss;

use ndarray::{Array1, Array2, ArrayView2, ArrayView4, ArrayViewD, ArrayViewMutD, Zip};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::nn::{conv_out, prefixed, Module};
use crate::real::{sigmoid, Real};
use crate::{Error, Result};

pub use decoder::{Decoder, DecoderCache};
pub use discriminator::{Discriminator, DiscriminatorCache};
pub use encoder::{Encoder, EncoderCache};

/// Layer widths and canvas geometry shared by the three networks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub canvas: usize,
    pub channels: usize,
    pub latent_dim: usize,
    /// Filters of the encoder's stride-2 groups; the decoder mirrors them.
    pub filters: Vec<usize>,
    pub discriminator_filters: Vec<usize>,
    /// Residual block after every encoder group and before every decoder
    /// up-sampling step.
    pub residual: bool,
}

impl Default for Architecture {
    fn default() -> Self {
        Self {
            canvas: 32,
            channels: 1,
            latent_dim: 50,
            filters: vec![32, 64, 128, 256],
            discriminator_filters: vec![32, 64, 128, 256],
            residual: true,
        }
    }
}

impl Architecture {
    pub fn validate(&self) -> Result<()> {
        if self.canvas == 0 || self.channels == 0 || self.latent_dim == 0 {
            return Err(Error::Config(
                "canvas, channels and latent_dim must be positive".into(),
            ));
        }
        if self.filters.is_empty() || self.filters.contains(&0) {
            return Err(Error::Config("encoder filter ladder must be nonempty and positive".into()));
        }
        if self.discriminator_filters.is_empty() || self.discriminator_filters.contains(&0) {
            return Err(Error::Config(
                "discriminator filter ladder must be nonempty and positive".into(),
            ));
        }
        Ok(())
    }

    /// Canvas side before the first and after every stride-2 group.
    pub fn spatial_sizes(&self, groups: usize) -> Vec<usize> {
        let mut s = vec![self.canvas];
        for _ in 0..groups {
            let last = *s.last().expect("nonempty");
            s.push(conv_out(last, 3, 2, 1));
        }
        s
    }

    /// Scalars per image.
    pub fn pixels(&self) -> usize {
        self.canvas * self.canvas * self.channels
    }
}

/// Per-sample mean and log-variance of the diagonal Gaussian posterior.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianPosterior<F> {
    pub mu: Array2<F>,
    pub log_var: Array2<F>,
}

impl<F: Real> GaussianPosterior<F> {
    pub fn new(mu: Array2<F>, log_var: Array2<F>) -> Result<Self> {
        if mu.dim() != log_var.dim() {
            return Err(Error::Shape(format!(
                "mu {:?} and log_var {:?} differ",
                mu.dim(),
                log_var.dim()
            )));
        }
        Ok(Self { mu, log_var })
    }

    pub fn batch(&self) -> usize {
        self.mu.nrows()
    }

    pub fn latent_dim(&self) -> usize {
        self.mu.ncols()
    }

    pub fn is_finite(&self) -> bool {
        self.mu.iter().chain(self.log_var.iter()).all(|v| v.is_finite())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LatentSample<F> {
    pub z: Array2<F>,
}

/// `z = mu + exp(log_var / 2) * eps`.
pub fn reparameterize<F: Real>(
    post: &GaussianPosterior<F>,
    eps: ArrayView2<'_, F>,
) -> Result<LatentSample<F>> {
    if eps.dim() != post.mu.dim() {
        return Err(Error::Shape(format!(
            "noise {:?} does not match posterior {:?}",
            eps.dim(),
            post.mu.dim()
        )));
    }
    let half = F::of(0.5);
    let mut z = post.mu.clone();
    Zip::from(&mut z)
        .and(&post.log_var)
        .and(&eps)
        .for_each(|z, &lv, &e| *z += (lv * half).exp() * e);
    Ok(LatentSample { z })
}

/// Bernoulli means `[M, H]`, each in `(0, 1)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ReconstructionParams<F> {
    pub eta: Array2<F>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DiscriminatorOutput<F> {
    pub logits: Array1<F>,
    pub probabilities: Array1<F>,
}

impl<F: Real> DiscriminatorOutput<F> {
    pub fn from_logits(logits: Array1<F>) -> Self {
        let probabilities = logits.mapv(sigmoid);
        Self {
            logits,
            probabilities,
        }
    }
}

/// Encoder (phi), decoder (theta) and discriminator (psi).
#[derive(Clone, Debug)]
pub struct FaeModel<F> {
    pub arch: Architecture,
    pub encoder: Encoder<F>,
    pub decoder: Decoder<F>,
    pub discriminator: Discriminator<F>,
}

impl<F: Real> FaeModel<F> {
    pub fn new<R: Rng + ?Sized>(arch: Architecture, rng: &mut R) -> Result<Self> {
        arch.validate()?;
        let encoder = Encoder::new(&arch, rng);
        let decoder = Decoder::new(&arch, rng);
        let discriminator = Discriminator::new(&arch, rng);
        Ok(Self {
            arch,
            encoder,
            decoder,
            discriminator,
        })
    }

    fn check_batch(&self, x: &ArrayView4<'_, F>) -> Result<()> {
        let (_, h, w, c) = x.dim();
        let a = &self.arch;
        if (h, w, c) != (a.canvas, a.canvas, a.channels) {
            return Err(Error::Shape(format!(
                "batch images are {h}x{w}x{c}, architecture expects {}x{}x{}",
                a.canvas, a.canvas, a.channels
            )));
        }
        Ok(())
    }

    pub fn encode(&self, x: ArrayView4<'_, F>) -> Result<GaussianPosterior<F>> {
        self.check_batch(&x)?;
        Ok(self.encoder.forward(x).0)
    }

    pub fn decode(&self, z: &LatentSample<F>) -> Result<ReconstructionParams<F>> {
        if z.z.ncols() != self.arch.latent_dim {
            return Err(Error::Shape(format!(
                "latent width {} does not match architecture {}",
                z.z.ncols(),
                self.arch.latent_dim
            )));
        }
        let (logits, _) = self.decoder.forward(z.z.view());
        let m = logits.dim().0;
        let eta = logits
            .mapv(sigmoid)
            .into_shape_with_order((m, self.arch.pixels()))
            .expect("contiguous");
        Ok(ReconstructionParams { eta })
    }

    pub fn discriminate(&self, x: ArrayView4<'_, F>) -> Result<DiscriminatorOutput<F>> {
        self.check_batch(&x)?;
        Ok(DiscriminatorOutput::from_logits(self.discriminator.forward(x).0))
    }

    /// Encoder and decoder parameters (phi, theta).
    pub fn autoencoder_params(&self) -> Vec<(String, ArrayViewD<'_, F>)> {
        let mut v = prefixed("encoder", self.encoder.params());
        v.extend(prefixed("decoder", self.decoder.params()));
        v
    }
}

impl<F: Real> Module<F> for FaeModel<F> {
    fn params(&self) -> Vec<(String, ArrayViewD<'_, F>)> {
        let mut v = self.autoencoder_params();
        v.extend(prefixed("discriminator", self.discriminator.params()));
        v
    }

    fn params_mut(&mut self) -> Vec<(String, ArrayViewMutD<'_, F>)> {
        let mut v = prefixed("encoder", self.encoder.params_mut());
        v.extend(prefixed("decoder", self.decoder.params_mut()));
        v.extend(prefixed("discriminator", self.discriminator.params_mut()));
        v
    }

    fn zeros_like(&self) -> Self {
        Self {
            arch: self.arch.clone(),
            encoder: self.encoder.zeros_like(),
            decoder: self.decoder.zeros_like(),
            discriminator: self.discriminator.zeros_like(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array4};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn reparameterize_examples() {
        let post = GaussianPosterior::new(array![[1.0f64]], array![[4.0f64.ln()]]).unwrap();
        let z = reparameterize(&post, array![[1.0]].view()).unwrap();
        assert!((z.z[[0, 0]] - 3.0).abs() < 1e-12);
        let z = reparameterize(&post, array![[0.0]].view()).unwrap();
        assert_eq!(z.z, post.mu);
        let unit = GaussianPosterior::new(array![[0.0, 0.0]], array![[0.0, 0.0]]).unwrap();
        let e = array![[0.3, -1.7]];
        assert_eq!(reparameterize(&unit, e.view()).unwrap().z, e);
    }

    #[test]
    fn shapes_follow_the_architecture() {
        let arch = Architecture {
            filters: vec![4, 4, 4, 4],
            discriminator_filters: vec![4, 4, 4, 4],
            ..Default::default()
        };
        let model = FaeModel::<f32>::new(arch, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let x = Array4::from_elem((3, 32, 32, 1), 0.3f32);
        let post = model.encode(x.view()).unwrap();
        assert_eq!(post.mu.dim(), (3, 50));
        assert_eq!(post.log_var.dim(), (3, 50));
        assert_eq!(post, model.encode(x.view()).unwrap());
        let eta = model.decode(&LatentSample { z: post.mu.clone() }).unwrap();
        assert_eq!(eta.eta.dim(), (3, 1024));
        assert!(eta.eta.iter().all(|&v| v > 0.0 && v < 1.0));
        let d = model.discriminate(x.view()).unwrap();
        assert_eq!(d.logits.len(), 3);
        let bad = Array4::from_elem((1, 28, 28, 1), 0.3f32);
        assert!(matches!(model.encode(bad.view()), Err(Error::Shape(_))));
    }

    #[test]
    fn colour_canvas() {
        let arch = Architecture {
            channels: 3,
            filters: vec![2, 2, 2, 2],
            discriminator_filters: vec![2, 2, 2, 2],
            ..Default::default()
        };
        let model = FaeModel::<f32>::new(arch, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let x = Array4::from_elem((4, 32, 32, 3), 0.5f32);
        assert_eq!(model.encode(x.view()).unwrap().mu.dim(), (4, 50));
    }

    #[test]
    fn discriminator_probabilities_are_sigmoids() {
        let out = DiscriminatorOutput::from_logits(array![0.0f64, 4.0]);
        assert_eq!(out.probabilities[0], 0.5);
        assert!((out.probabilities[1] - 0.982_013_790_037_908_4).abs() < 1e-12);
    }
}
