use ndarray::{concatenate, Array2, ArrayD, ArrayViewD, ArrayViewMutD, Axis};
use sha2::{Digest, Sha256};

use crate::checkpoint::TensorFile;
use crate::datasets::ImageSet;
use crate::fae::{Architecture, FaeModel};
use crate::head::{EmbeddingHead, HeadConfig};
use crate::nn::{prefixed, Module};
use crate::real::Real;
use crate::{rng, Error, Result};

/// Parameter groups: encoder (phi), decoder (theta), head (xi),
/// discriminator (psi).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamGroup {
    Encoder,
    Decoder,
    Head,
    Discriminator,
}

impl ParamGroup {
    pub const ALL: [ParamGroup; 4] = [
        ParamGroup::Encoder,
        ParamGroup::Decoder,
        ParamGroup::Head,
        ParamGroup::Discriminator,
    ];

    pub fn prefix(self) -> &'static str {
        match self {
            ParamGroup::Encoder => "encoder.",
            ParamGroup::Decoder => "decoder.",
            ParamGroup::Head => "head.",
            ParamGroup::Discriminator => "discriminator.",
        }
    }
}

#[derive(Clone, Debug)]
pub struct DcfaeModel<F> {
    pub fae: FaeModel<F>,
    pub head: EmbeddingHead<F>,
    pub head_config: HeadConfig,
}

impl<F: Real> DcfaeModel<F> {
    pub fn new(arch: Architecture, head: HeadConfig, seed: u64) -> Result<Self> {
        if head.input_dim != arch.latent_dim {
            return Err(Error::Config(format!(
                "head input width {} differs from latent dimension {}",
                head.input_dim, arch.latent_dim
            )));
        }
        let mut r = rng::stream(seed, &[rng::INIT]);
        let fae = FaeModel::new(arch, &mut r)?;
        let h = EmbeddingHead::new(&head, &mut r)?;
        Ok(Self {
            fae,
            head: h,
            head_config: head,
        })
    }

    pub fn arch(&self) -> &Architecture {
        &self.fae.arch
    }

    /// Hex SHA-256 over the names and values of one parameter group.
    pub fn group_hash(&self, group: ParamGroup) -> String {
        hash_params(
            self.params()
                .into_iter()
                .filter(|(n, _)| n.starts_with(group.prefix())),
        )
    }

    /// Latent means for every image, in dataset order.
    pub fn encode_means(&self, images: &ImageSet, batch: usize) -> Result<Array2<F>> {
        let n = images.len();
        let mut parts = Vec::new();
        for start in (0..n).step_by(batch.max(1)) {
            let idx: Vec<usize> = (start..(start + batch).min(n)).collect();
            let x = images.gather(&idx).mapv(|v| F::of(v as f64));
            parts.push(self.fae.encode(x.view())?.mu);
        }
        let views: Vec<_> = parts.iter().map(|p| p.view()).collect();
        concatenate(Axis(0), &views).map_err(|e| Error::Shape(e.to_string()))
    }

    /// Clustering features: head embeddings of the means, or the means
    /// themselves when the head is bypassed.
    pub fn features(&self, images: &ImageSet, use_head: bool, batch: usize) -> Result<Array2<f64>> {
        let mu = self.encode_means(images, batch)?;
        let f = if use_head { self.head.embed(mu.view())? } else { mu };
        let f = f.mapv(|v| v.as_f64());
        if f.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric {
                term: "features",
                detail: "non-finite embedding".into(),
            });
        }
        Ok(f)
    }

    pub fn to_tensor_file(&self) -> TensorFile {
        let mut f = TensorFile::new();
        for (n, t) in self.params() {
            f.insert(n, t.mapv(|v| v.as_f64() as f32));
        }
        f.metadata.insert("format".into(), "dcfae-checkpoint-1".into());
        f.metadata.insert(
            "architecture".into(),
            serde_json::to_string(self.arch()).expect("serializable"),
        );
        f.metadata.insert(
            "head".into(),
            serde_json::to_string(&self.head_config).expect("serializable"),
        );
        f
    }

    pub fn from_tensor_file(file: &TensorFile) -> Result<Self> {
        let arch: Architecture = serde_json::from_str(file.meta("architecture")?)?;
        let head: HeadConfig = serde_json::from_str(file.meta("head")?)?;
        let mut model = Self::new(arch, head, 0)?;
        let src: Vec<(String, ArrayD<F>)> = file
            .tensors
            .iter()
            .filter(|(n, _)| ParamGroup::ALL.iter().any(|g| n.starts_with(g.prefix())))
            .map(|(n, t)| (n.clone(), t.mapv(|v| F::of(v as f64))))
            .collect();
        model.load_params(&src)?;
        Ok(model)
    }
}

pub fn hash_params<'a, F: Real>(params: impl IntoIterator<Item = (String, ArrayViewD<'a, F>)>) -> String {
    let mut h = Sha256::new();
    for (name, t) in params {
        h.update(name.as_bytes());
        for d in t.shape() {
            h.update((*d as u64).to_le_bytes());
        }
        for v in t.iter() {
            h.update(v.as_f64().to_le_bytes());
        }
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

impl<F: Real> Module<F> for DcfaeModel<F> {
    fn params(&self) -> Vec<(String, ArrayViewD<'_, F>)> {
        let mut v = self.fae.params();
        v.extend(prefixed("head", self.head.params()));
        v
    }

    fn params_mut(&mut self) -> Vec<(String, ArrayViewMutD<'_, F>)> {
        let mut v = self.fae.params_mut();
        v.extend(prefixed("head", self.head.params_mut()));
        v
    }

    fn zeros_like(&self) -> Self {
        Self {
            fae: self.fae.zeros_like(),
            head: self.head.zeros_like(),
            head_config: self.head_config.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn tiny() -> (Architecture, HeadConfig) {
        let arch = Architecture {
            canvas: 8,
            channels: 1,
            latent_dim: 3,
            filters: vec![2, 2],
            discriminator_filters: vec![2, 2],
            residual: true,
        };
        let head = HeadConfig {
            input_dim: 3,
            hidden: vec![4, 4, 5],
            embedding_dim: 2,
            dropout_rate: 0.3,
            l2: 1e-4,
        };
        (arch, head)
    }

    #[test]
    fn checkpoint_round_trip_preserves_parameters() {
        let (a, h) = tiny();
        let m = DcfaeModel::<f32>::new(a, h, 5).unwrap();
        let back = DcfaeModel::<f32>::from_tensor_file(&m.to_tensor_file()).unwrap();
        for g in ParamGroup::ALL {
            assert_eq!(m.group_hash(g), back.group_hash(g));
        }
    }

    #[test]
    fn hashes_react_to_a_single_change() {
        let (a, h) = tiny();
        let mut m = DcfaeModel::<f64>::new(a, h, 5).unwrap();
        let before: Vec<String> = ParamGroup::ALL.iter().map(|&g| m.group_hash(g)).collect();
        m.head.layers[1].bias[0] += 1e-9;
        let after: Vec<String> = ParamGroup::ALL.iter().map(|&g| m.group_hash(g)).collect();
        assert_eq!(before[0], after[0]);
        assert_eq!(before[1], after[1]);
        assert_ne!(before[2], after[2]);
        assert_eq!(before[3], after[3]);
    }

    #[test]
    fn missing_tensor_is_a_mismatch() {
        let (a, h) = tiny();
        let m = DcfaeModel::<f32>::new(a, h, 5).unwrap();
        let mut f = m.to_tensor_file();
        let name = f.tensors.keys().next().unwrap().clone();
        f.tensors.remove(&name);
        assert!(matches!(DcfaeModel::<f32>::from_tensor_file(&f), Err(Error::CheckpointMismatch(_))));
    }
}
