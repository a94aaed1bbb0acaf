use serde::{Deserialize, Serialize};

use crate::datasets::AugmentConfig;
use crate::fae::Architecture;
use crate::head::{HeadConfig, KMeansConfig};
use crate::{Error, Result};

/// Everything a training run needs besides the data. Unset fields take the
/// defaults below.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Weight of the generator loss.
    pub lambda: f64,
    /// Weight of the clustering loss. Also accepted as `gamma`.
    #[serde(alias = "gamma")]
    pub lambda_prime: f64,
    /// Degrees of freedom of the latent-space t-kernel.
    pub rho: f64,
    pub latent_dim: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub pretrain_epochs: usize,
    pub finetune_epochs: usize,
    pub clusters: usize,
    pub seed: u64,
    pub no_discriminator: bool,
    pub no_residual: bool,
    pub no_dense_head: bool,
    pub filters: Vec<usize>,
    pub discriminator_filters: Vec<usize>,
    pub head_hidden: Vec<usize>,
    /// Defaults to `clusters`.
    pub embedding_dim: Option<usize>,
    pub dropout: f64,
    pub l2: f64,
    /// Treat the latent similarities as constants in the clustering loss.
    pub stop_grad_p: bool,
    pub augment: AugmentConfig,
    /// Checkpoint period in epochs; phase boundaries are always saved.
    pub checkpoint_every: usize,
    pub kmeans: KMeansConfig,
    /// Fully serial, bit-reproducible execution.
    pub reference_mode: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda: 100.0,
            lambda_prime: 10.0,
            rho: 100.0,
            latent_dim: 50,
            batch_size: 256,
            learning_rate: 1e-4,
            pretrain_epochs: 100,
            finetune_epochs: 100,
            clusters: 10,
            seed: 0,
            no_discriminator: false,
            no_residual: false,
            no_dense_head: false,
            filters: vec![32, 64, 128, 256],
            discriminator_filters: vec![32, 64, 128, 256],
            head_hidden: vec![500, 500, 2000],
            embedding_dim: None,
            dropout: 0.3,
            l2: 1e-4,
            stop_grad_p: false,
            augment: AugmentConfig::default(),
            checkpoint_every: 10,
            kmeans: KMeansConfig::default(),
            reference_mode: true,
        }
    }
}

impl TrainConfig {
    /// Smaller preset for CPU runs: 40 + 40 epochs at batch size 128.
    pub fn desk() -> Self {
        Self {
            pretrain_epochs: 40,
            finetune_epochs: 40,
            batch_size: 128,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.lambda >= 0.0) {
            return bad(format!("lambda must be >= 0, got {}", self.lambda));
        }
        if !(self.lambda_prime >= 0.0) {
            return bad(format!("lambda_prime must be >= 0, got {}", self.lambda_prime));
        }
        if !(self.rho > 0.0) {
            return bad(format!("rho must be > 0, got {}", self.rho));
        }
        if !(self.learning_rate > 0.0) {
            return bad(format!("learning_rate must be > 0, got {}", self.learning_rate));
        }
        if self.batch_size < 2 {
            return bad(format!("batch_size must be >= 2, got {}", self.batch_size));
        }
        if self.clusters == 0 || self.latent_dim == 0 {
            return bad("clusters and latent_dim must be positive".into());
        }
        if self.checkpoint_every == 0 {
            return bad("checkpoint_every must be positive".into());
        }
        if self.embedding_dim == Some(0) {
            return bad("embedding_dim must be positive".into());
        }
        self.augment.validate()?;
        self.head(self.latent_dim).validate()
    }

    pub fn architecture(&self, canvas: usize, channels: usize) -> Architecture {
        Architecture {
            canvas,
            channels,
            latent_dim: self.latent_dim,
            filters: self.filters.clone(),
            discriminator_filters: self.discriminator_filters.clone(),
            residual: !self.no_residual,
        }
    }

    pub fn head(&self, input_dim: usize) -> HeadConfig {
        HeadConfig {
            input_dim,
            hidden: self.head_hidden.clone(),
            embedding_dim: self.embedding_dim.unwrap_or(self.clusters),
            dropout_rate: self.dropout,
            l2: self.l2,
        }
    }

    pub fn uses_head(&self) -> bool {
        !self.no_dense_head
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_json_gives_the_defaults() {
        let c: TrainConfig = serde_json::from_str("{}").unwrap();
        assert_eq!(c, TrainConfig::default());
        assert_eq!(c.lambda, 100.0);
        assert_eq!(c.lambda_prime, 10.0);
        assert_eq!(c.rho, 100.0);
        assert_eq!(c.latent_dim, 50);
        assert_eq!(c.batch_size, 256);
        assert_eq!(c.learning_rate, 1e-4);
        assert_eq!(c.dropout, 0.3);
        c.validate().unwrap();
    }

    #[test]
    fn gamma_is_an_alias() {
        let c: TrainConfig = serde_json::from_str(r#"{"gamma": 3}"#).unwrap();
        assert_eq!(c.lambda_prime, 3.0);
    }

    #[test]
    fn unknown_keys_and_bad_values_are_rejected() {
        assert!(serde_json::from_str::<TrainConfig>(r#"{"lamda": 1}"#).is_err());
        let c = TrainConfig {
            lambda: -1.0,
            ..TrainConfig::default()
        };
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        let c = TrainConfig {
            batch_size: 1,
            ..TrainConfig::default()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn embedding_defaults_to_cluster_count() {
        let c = TrainConfig {
            clusters: 7,
            ..TrainConfig::default()
        };
        assert_eq!(c.head(50).embedding_dim, 7);
        assert!(!c.architecture(32, 1).filters.is_empty());
    }
}
