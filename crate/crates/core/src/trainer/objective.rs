//! Per-batch objectives with their analytic gradients.

use ndarray::{concatenate, Array1, Array2, Array4, ArrayView2, ArrayView4, Axis, Zip};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{DcfaeModel, Phase, TrainConfig};
use crate::fae::loss::{bce_with_logits, discriminator_targets, generator_loss_from_logits, neg_elbo_from_logits};
use crate::fae::{Discriminator, GaussianPosterior};
use crate::head::clustering_loss_grad;
use crate::nn::Module;
use crate::real::{sigmoid, Real};
use crate::{Error, Result};

/// Batch losses as logged. Terms a configuration skips are `None`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct StepLosses {
    pub neg_elbo: f64,
    pub gen_loss: Option<f64>,
    pub disc_loss: Option<f64>,
    pub cluster_loss: Option<f64>,
    /// Negated ELBO plus lambda times the generator loss.
    pub alpha_loss: f64,
    /// `alpha_loss + lambda_prime * cluster_loss`; fine-tuning only.
    pub joint_loss: Option<f64>,
}

pub struct JointStep<F> {
    pub losses: StepLosses,
    /// The scalar whose gradient is `grads`: the logged objective plus the
    /// head's weight penalty when the head is trained.
    pub total: F,
    /// Encoder, decoder and head gradients; the discriminator part is zero.
    pub grads: DcfaeModel<F>,
    /// Detached reconstructions `[M, H, W, C]` for the discriminator update.
    pub fake: Array4<F>,
    pub posterior: GaussianPosterior<F>,
}

pub struct DiscriminatorStep<F> {
    pub loss: F,
    pub grads: Discriminator<F>,
    pub fake_logits: Array1<F>,
    pub real_logits: Array1<F>,
}

fn finite<F: Real>(v: F, term: &'static str) -> Result<F> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Numeric {
            term,
            detail: format!("value {v}"),
        })
    }
}

/// The autoencoder-side objective for one batch.
///
/// Pre-training: negated ELBO plus `lambda` times the generator loss.
/// Fine-tuning additionally adds `lambda_prime` times the clustering loss
/// on the head embeddings, with gradients reaching the encoder through the
/// head and, unless `stop_grad_p`, through the latent similarities.
pub fn joint_objective<F: Real>(
    model: &DcfaeModel<F>,
    cfg: &TrainConfig,
    phase: Phase,
    x: ArrayView4<'_, F>,
    eps: ArrayView2<'_, F>,
    dropout_seed: u64,
) -> Result<JointStep<F>> {
    let fae = &model.fae;
    let (m, h, w, c) = x.dim();
    let arch = fae.arch.clone();
    if (h, w, c) != (arch.canvas, arch.canvas, arch.channels) {
        return Err(Error::Shape(format!(
            "batch images are {h}x{w}x{c}, architecture expects {}x{}x{}",
            arch.canvas, arch.canvas, arch.channels
        )));
    }
    if eps.dim() != (m, arch.latent_dim) {
        return Err(Error::Shape(format!("noise is {:?}, expected ({m}, {})", eps.dim(), arch.latent_dim)));
    }
    let mut grads = model.zeros_like();
    let (post, ecache) = fae.encoder.forward(x);
    let half = F::of(0.5);
    let std = post.log_var.mapv(|l| (half * l).exp());
    let z = &post.mu + &(&std * &eps);
    let (logits, dcache) = fae.decoder.forward(z.view());
    let pixels = arch.pixels();
    let x2 = x.to_owned().into_shape_with_order((m, pixels)).expect("contiguous");
    let l2 = logits.view().into_shape_with_order((m, pixels)).expect("contiguous");
    let ne = neg_elbo_from_logits(x2.view(), &post, l2)?;
    let mut dlogits = ne
        .dlogits
        .clone()
        .into_shape_with_order(logits.raw_dim())
        .expect("contiguous");
    let fake = logits.mapv(sigmoid);

    let lambda = F::of(cfg.lambda);
    let mut losses = StepLosses {
        neg_elbo: ne.value.as_f64(),
        ..StepLosses::default()
    };
    let mut alpha = ne.value;
    if !cfg.no_discriminator {
        let (flog, dcache_d) = fae.discriminator.forward(fake.view());
        let (lg, dflog) = generator_loss_from_logits(flog.view());
        let lg = finite(lg, "generator")?;
        losses.gen_loss = Some(lg.as_f64());
        alpha += lambda * lg;
        // the discriminator's own gradient from this term is discarded
        let mut scratch = fae.discriminator.zeros_like();
        let dfake = fae
            .discriminator
            .backward(&dcache_d, &(dflog * lambda), &mut scratch, true)
            .expect("input gradient");
        Zip::from(&mut dlogits)
            .and(&dfake)
            .and(&fake)
            .for_each(|d, &g, &e| *d += g * e * (F::one() - e));
    }
    losses.alpha_loss = alpha.as_f64();
    let mut total = alpha;

    let dz = fae.decoder.backward(&dcache, &dlogits, &mut grads.fae.decoder);
    let mut dmu = &ne.dmu + &dz;
    let mut dlog_var = ne.dlog_var.clone();
    Zip::from(&mut dlog_var)
        .and(&dz)
        .and(&eps)
        .and(&std)
        .for_each(|d, &g, &e, &s| *d += g * e * half * s);

    if phase == Phase::Finetune && cfg.uses_head() {
        let lp = F::of(cfg.lambda_prime);
        let mut r = ChaCha8Rng::seed_from_u64(dropout_seed);
        let (emb, hcache) = model.head.forward(post.mu.view(), Some(&mut r))?;
        let cg = clustering_loss_grad(post.mu.view(), emb.view(), F::of(cfg.rho), !cfg.stop_grad_p)?;
        let gamma = finite(cg.value, "clustering")?;
        losses.cluster_loss = Some(gamma.as_f64());
        let joint = alpha + lp * gamma;
        losses.joint_loss = Some(joint.as_f64());
        let dmu_head = model.head.backward(&hcache, &(cg.dc * lp), &mut grads.head);
        dmu += &dmu_head;
        if let Some(dp) = cg.dmu {
            dmu.scaled_add(lp, &dp);
        }
        model.head.add_l2_grad(&mut grads.head);
        total = joint + model.head.l2_penalty();
    }
    fae.encoder.backward(&ecache, &dmu, &dlog_var, &mut grads.fae.encoder);
    finite(total, "objective")?;
    Ok(JointStep {
        losses,
        total,
        grads,
        fake,
        posterior: post,
    })
}

/// Binary cross-entropy of the discriminator on `[fake, real]` with
/// targets `[0; M] ++ [1; M]`.
pub fn discriminator_objective<F: Real>(
    disc: &Discriminator<F>,
    fake: ArrayView4<'_, F>,
    real: ArrayView4<'_, F>,
) -> Result<DiscriminatorStep<F>> {
    if fake.dim() != real.dim() {
        return Err(Error::Shape(format!("fake batch {:?} vs real batch {:?}", fake.dim(), real.dim())));
    }
    let m = fake.dim().0;
    let both = concatenate(Axis(0), &[fake, real]).map_err(|e| Error::Shape(e.to_string()))?;
    let (logits, cache) = disc.forward(both.view());
    let targets = discriminator_targets::<F>(m);
    let (loss, dlogits) = bce_with_logits(targets.view(), logits.view());
    let loss = finite(loss, "discriminator")?;
    let mut grads = disc.zeros_like();
    disc.backward(&cache, &dlogits, &mut grads, false);
    Ok(DiscriminatorStep {
        loss,
        grads,
        fake_logits: logits.slice(ndarray::s![..m]).to_owned(),
        real_logits: logits.slice(ndarray::s![m..]).to_owned(),
    })
}

/// Standard-normal noise `[m, l]` for the reparameterization.
pub fn standard_noise<F: Real, R: rand::Rng + ?Sized>(m: usize, l: usize, rng: &mut R) -> Array2<F> {
    use rand_distr::{Distribution, StandardNormal};
    Array2::from_shape_simple_fn((m, l), || {
        let v: f64 = StandardNormal.sample(rng);
        F::of(v)
    })
}
