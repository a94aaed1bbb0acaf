//! Loss terms of the fusion autoencoder.
//!
//! The probability-valued functions clamp into `[PROB_CLAMP, 1 - PROB_CLAMP]`
//! before any logarithm. Training uses the `*_from_logits` forms, which are
//! exact and also return gradients.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Zip};

use super::{GaussianPosterior, ReconstructionParams};
use crate::real::{sigmoid, softplus, Real};
use crate::{Error, Result};

pub const PROB_CLAMP: f64 = 1e-7;

fn clamp_prob<F: Real>(p: F) -> F {
    p.max(F::of(PROB_CLAMP)).min(F::of(1.0 - PROB_CLAMP))
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

/// Per-sample `KL(N(mu, diag(exp(log_var))) || N(0, I))`.
pub fn kl_per_sample<F: Real>(post: &GaussianPosterior<F>) -> Array1<F> {
    let half = F::of(0.5);
    let mut out = Array1::zeros(post.batch());
    for ((mu, lv), o) in post
        .mu
        .rows()
        .into_iter()
        .zip(post.log_var.rows())
        .zip(out.iter_mut())
    {
        *o = mu
            .iter()
            .zip(lv.iter())
            .map(|(&m, &l)| half * (l.exp() + m * m - l - F::one()))
            .sum();
    }
    out
}

/// Batch mean of the KL term.
pub fn kl_divergence<F: Real>(post: &GaussianPosterior<F>) -> F {
    let per = kl_per_sample(post);
    per.sum() / F::of(per.len() as f64)
}

/// Batch mean of `sum_j x_j log eta_j + (1 - x_j) log(1 - eta_j)`.
pub fn bernoulli_log_likelihood<F: Real>(x: ArrayView2<'_, F>, eta: ArrayView2<'_, F>) -> F {
    let mut acc = F::zero();
    Zip::from(&x).and(&eta).for_each(|&xi, &e| {
        let e = clamp_prob(e);
        acc += xi * e.ln() + (F::one() - xi) * (F::one() - e).ln();
    });
    acc / F::of(x.nrows() as f64)
}

fn check_elbo_shapes<F: Real>(x: &ArrayView2<'_, F>, post: &GaussianPosterior<F>, h: (usize, usize)) -> Result<()> {
    if x.dim() != h {
        return Err(Error::Shape(format!(
            "images {:?} vs reconstruction {:?}",
            x.dim(),
            h
        )));
    }
    if post.batch() != x.nrows() {
        return Err(Error::Shape(format!(
            "posterior batch {} vs image batch {}",
            post.batch(),
            x.nrows()
        )));
    }
    Ok(())
}

/// Negated evidence lower bound for flattened images `x: [M, H]`.
pub fn elbo_loss<F: Real>(
    x: ArrayView2<'_, F>,
    post: &GaussianPosterior<F>,
    eta: &ReconstructionParams<F>,
) -> Result<F> {
    check_elbo_shapes(&x, post, eta.eta.dim())?;
    let ll = finite(bernoulli_log_likelihood(x, eta.eta.view()), "reconstruction")?;
    let kl = finite(kl_divergence(post), "kl")?;
    Ok(kl - ll)
}

/// Value and gradients of the negated ELBO, with the Bernoulli term
/// evaluated from decoder logits.
#[derive(Clone, Debug)]
pub struct NegElbo<F> {
    pub value: F,
    /// Batch-mean reconstruction cross-entropy.
    pub reconstruction: F,
    /// Batch-mean KL term.
    pub kl: F,
    pub dlogits: Array2<F>,
    pub dmu: Array2<F>,
    pub dlog_var: Array2<F>,
}

pub fn neg_elbo_from_logits<F: Real>(
    x: ArrayView2<'_, F>,
    post: &GaussianPosterior<F>,
    logits: ArrayView2<'_, F>,
) -> Result<NegElbo<F>> {
    check_elbo_shapes(&x, post, logits.dim())?;
    let m = F::of(x.nrows() as f64);
    let mut rec = F::zero();
    let mut dlogits = Array2::zeros(x.dim());
    Zip::from(&mut dlogits)
        .and(&x)
        .and(&logits)
        .for_each(|d, &xi, &a| {
            rec += softplus(a) - xi * a;
            *d = (sigmoid(a) - xi) / m;
        });
    let reconstruction = finite(rec / m, "reconstruction")?;
    let kl = finite(kl_divergence(post), "kl")?;
    let half = F::of(0.5);
    let dmu = post.mu.mapv(|v| v / m);
    let dlog_var = post.log_var.mapv(|l| half * (l.exp() - F::one()) / m);
    Ok(NegElbo {
        value: reconstruction + kl,
        reconstruction,
        kl,
        dlogits,
        dmu,
        dlog_var,
    })
}

/// `[0; M]` followed by `[1; M]`: fakes first, then reals.
pub fn discriminator_targets<F: Real>(m: usize) -> Array1<F> {
    Array1::from_shape_fn(2 * m, |i| if i < m { F::zero() } else { F::one() })
}

/// Mean binary cross-entropy between targets and predicted probabilities.
pub fn discriminator_loss<F: Real>(targets: ArrayView1<'_, F>, probs: ArrayView1<'_, F>) -> Result<F> {
    if targets.len() != probs.len() {
        return Err(Error::Shape(format!(
            "{} targets vs {} predictions",
            targets.len(),
            probs.len()
        )));
    }
    if probs.is_empty() {
        return Err(Error::Shape("empty discriminator batch".into()));
    }
    let s: F = targets
        .iter()
        .zip(probs.iter())
        .map(|(&t, &p)| {
            let p = clamp_prob(p);
            t * p.ln() + (F::one() - t) * (F::one() - p).ln()
        })
        .sum();
    Ok(-s / F::of(probs.len() as f64))
}

/// Mean binary cross-entropy from logits, with its gradient.
pub fn bce_with_logits<F: Real>(targets: ArrayView1<'_, F>, logits: ArrayView1<'_, F>) -> (F, Array1<F>) {
    assert_eq!(targets.len(), logits.len(), "bce lengths");
    let n = F::of(logits.len() as f64);
    let mut loss = F::zero();
    let mut grad = Array1::zeros(logits.len());
    for ((g, &t), &l) in grad.iter_mut().zip(targets.iter()).zip(logits.iter()) {
        loss += softplus(l) - t * l;
        *g = (sigmoid(l) - t) / n;
    }
    (loss / n, grad)
}

/// Non-saturating generator loss `-mean(log p)` on the fake predictions.
pub fn generator_loss<F: Real>(probs: ArrayView1<'_, F>) -> F {
    let s: F = probs.iter().map(|&p| clamp_prob(p).ln()).sum();
    -s / F::of(probs.len() as f64)
}

pub fn generator_loss_from_logits<F: Real>(logits: ArrayView1<'_, F>) -> (F, Array1<F>) {
    let targets = Array1::from_elem(logits.len(), F::one());
    bce_with_logits(targets.view(), logits)
}

/// Negated ELBO plus `lambda` times the generator loss.
pub fn fae_objective<F: Real>(
    x: ArrayView2<'_, F>,
    post: &GaussianPosterior<F>,
    eta: &ReconstructionParams<F>,
    fake_probs: ArrayView1<'_, F>,
    lambda: F,
) -> Result<F> {
    if lambda < F::zero() || !lambda.is_finite() {
        return Err(Error::Config(format!("lambda must be >= 0, got {lambda}")));
    }
    let neg_elbo = elbo_loss(x, post, eta)?;
    if lambda == F::zero() {
        return Ok(neg_elbo);
    }
    Ok(neg_elbo + lambda * generator_loss(fake_probs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn post(mu: f64, var: f64) -> GaussianPosterior<f64> {
        GaussianPosterior::new(array![[mu]], array![[var.ln()]]).unwrap()
    }

    #[test]
    fn half_probability_pixel() {
        let eta = ReconstructionParams { eta: array![[0.5]] };
        let v = elbo_loss(array![[1.0]].view(), &post(0.0, 1.0), &eta).unwrap();
        assert!((v - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn kl_examples() {
        assert_eq!(kl_divergence(&post(0.0, 1.0)), 0.0);
        assert!((kl_divergence(&post(1.0, 1.0)) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn logit_form_matches_probability_form() {
        let x = array![[1.0, 0.0, 1.0], [0.0, 0.3, 1.0]];
        let logits = array![[0.2, -1.0, 3.0], [0.5, 0.0, -2.0]];
        let p = GaussianPosterior::new(array![[0.1], [-0.4]], array![[0.2], [-0.3]]).unwrap();
        let eta = ReconstructionParams {
            eta: logits.mapv(sigmoid),
        };
        let a: f64 = elbo_loss(x.view(), &p, &eta).unwrap();
        let b = neg_elbo_from_logits(x.view(), &p, logits.view()).unwrap();
        assert!((a - b.value).abs() < 1e-9);
    }

    #[test]
    fn discriminator_loss_examples() {
        let t = array![0.0, 1.0];
        let half = array![0.5, 0.5];
        assert!((discriminator_loss(t.view(), half.view()).unwrap() - std::f64::consts::LN_2).abs() < 1e-12);
        let p = array![0.2, 0.9];
        let expected = -0.5 * (0.8f64.ln() + 0.9f64.ln());
        assert!((discriminator_loss(t.view(), p.view()).unwrap() - expected).abs() < 1e-12);
        assert!((expected - 0.1643).abs() < 1e-4);
        let perfect = discriminator_loss(t.view(), t.view()).unwrap();
        assert!(perfect < 1e-6);
        assert!(discriminator_loss(t.view(), array![0.5].view()).is_err());
    }

    #[test]
    fn generator_loss_examples() {
        assert!((generator_loss(array![0.5].view()) - std::f64::consts::LN_2).abs() < 1e-12);
        assert!((generator_loss(array![(-1.0f64).exp()].view()) - 1.0).abs() < 1e-12);
        assert!(generator_loss(array![1.0, 1.0].view()) < 1e-6);
    }

    #[test]
    fn objective_is_linear_in_lambda() {
        let x = array![[1.0]];
        let eta = ReconstructionParams { eta: array![[0.5]] };
        let p = post(0.0, 1.0);
        let fake = array![0.5];
        let neg = elbo_loss(x.view(), &p, &eta).unwrap();
        assert_eq!(fae_objective(x.view(), &p, &eta, fake.view(), 0.0).unwrap(), neg);
        let v = fae_objective(x.view(), &p, &eta, fake.view(), 100.0).unwrap();
        assert!((v - (neg + 100.0 * std::f64::consts::LN_2)).abs() < 1e-9);
        assert!(matches!(
            fae_objective(x.view(), &p, &eta, fake.view(), -1.0),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn non_finite_terms_are_reported() {
        let p = GaussianPosterior::new(array![[0.0]], array![[f64::INFINITY]]).unwrap();
        let eta = ReconstructionParams { eta: array![[0.5]] };
        match elbo_loss(array![[1.0]].view(), &p, &eta) {
            Err(Error::Numeric { term, .. }) => assert_eq!(term, "kl"),
            other => panic!("{other:?}"),
        }
    }
}
