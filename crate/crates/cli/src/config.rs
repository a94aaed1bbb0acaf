//! Run configuration: a JSON file plus dotted-path `--set` overrides.

use std::env;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context};
use dcfae::datasets::{load_manifest, ImageDataset};
use dcfae::trainer::TrainConfig;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

pub const DATA_DIR_VAR: &str = "DCFAE_DATA_DIR";

/// A training config plus where its data comes from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    /// Dataset manifest. Relative paths resolve against `DCFAE_DATA_DIR`
    /// when set, otherwise against the config file's directory.
    pub dataset: Option<String>,
    /// Keep a seeded random subset of this many images.
    pub subsample: Option<usize>,
    pub subsample_seed: u64,
    #[serde(flatten)]
    pub train: TrainConfig,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

const RUN_KEYS: [&str; 3] = ["dataset", "subsample", "subsample_seed"];

/// Parses `a.b.c=value`; the value is read as JSON and falls back to a
/// plain string.
pub fn parse_override(s: &str) -> anyhow::Result<(Vec<String>, Value)> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| anyhow!("override `{s}` is not of the form key=value"))?;
    if k.is_empty() || k.split('.').any(str::is_empty) {
        bail!("override `{s}` has an empty key segment");
    }
    let value = serde_json::from_str(v).unwrap_or_else(|_| Value::String(v.to_string()));
    Ok((k.split('.').map(String::from).collect(), value))
}

pub fn apply_override(root: &mut Value, path: &[String], value: Value) -> anyhow::Result<()> {
    let mut cur = root;
    for (i, seg) in path.iter().enumerate() {
        let obj = cur
            .as_object_mut()
            .ok_or_else(|| anyhow!("cannot set `{}`: parent is not an object", path.join(".")))?;
        if i + 1 == path.len() {
            obj.insert(seg.clone(), value);
            return Ok(());
        }
        cur = obj.entry(seg.clone()).or_insert_with(|| Value::Object(Map::new()));
    }
    Ok(())
}

impl RunConfig {
    /// Reads `path` (or starts from defaults when `None`), then applies the
    /// overrides in order.
    pub fn resolve(path: Option<&Path>, overrides: &[String]) -> anyhow::Result<Self> {
        let (mut root, base_dir) = match path {
            Some(p) => {
                let text = fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
                let v: Value =
                    serde_json::from_str(&text).with_context(|| format!("parsing config {}", p.display()))?;
                let dir = p.parent().map(Path::to_path_buf).unwrap_or_default();
                (v, dir)
            }
            None => (Value::Object(Map::new()), PathBuf::from(".")),
        };
        if !root.is_object() {
            bail!("config must be a JSON object");
        }
        for o in overrides {
            let (k, v) = parse_override(o)?;
            apply_override(&mut root, &k, v)?;
        }
        let obj = root.as_object_mut().expect("checked object");
        let mut run = Map::new();
        for k in RUN_KEYS {
            if let Some(v) = obj.remove(k) {
                run.insert(k.to_string(), v);
            }
        }
        let train: TrainConfig = serde_json::from_value(Value::Object(obj.clone())).context("invalid training config")?;
        let get = |k: &str| run.get(k).filter(|v| !v.is_null());
        let dataset = get("dataset")
            .map(|v| v.as_str().map(String::from).ok_or_else(|| anyhow!("`dataset` must be a string")))
            .transpose()?;
        let subsample = get("subsample")
            .map(|v| v.as_u64().map(|n| n as usize).ok_or_else(|| anyhow!("`subsample` must be a count")))
            .transpose()?;
        let subsample_seed = get("subsample_seed")
            .map(|v| v.as_u64().ok_or_else(|| anyhow!("`subsample_seed` must be an integer")))
            .transpose()?
            .unwrap_or(0);
        train.validate()?;
        Ok(Self {
            dataset,
            subsample,
            subsample_seed,
            train,
            base_dir,
        })
    }

    pub fn manifest_path(&self) -> anyhow::Result<PathBuf> {
        let name = self
            .dataset
            .as_deref()
            .ok_or_else(|| anyhow!("config names no `dataset` manifest"))?;
        let p = Path::new(name);
        if p.is_absolute() {
            return Ok(p.to_path_buf());
        }
        Ok(match env::var_os(DATA_DIR_VAR) {
            Some(root) if !root.is_empty() => PathBuf::from(root).join(p),
            _ => self.base_dir.join(p),
        })
    }

    pub fn load_dataset(&self) -> anyhow::Result<ImageDataset> {
        let path = self.manifest_path()?;
        let ds = load_manifest(&path).with_context(|| format!("loading dataset {}", path.display()))?;
        Ok(match self.subsample {
            Some(n) => ds.subsample(n, self.subsample_seed)?,
            None => ds,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("serializable")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_parse_json_values() {
        let (k, v) = parse_override("augment.enabled=false").unwrap();
        assert_eq!(k, vec!["augment", "enabled"]);
        assert_eq!(v, Value::Bool(false));
        assert_eq!(parse_override("dataset=usps.json").unwrap().1, Value::String("usps.json".into()));
        assert!(parse_override("lambda").is_err());
        assert!(parse_override("a..b=1").is_err());
    }

    #[test]
    fn resolve_applies_overrides_over_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        fs::write(&p, r#"{"dataset": "d.json", "lambda": 5, "augment": {"rotation_degrees": 3}}"#).unwrap();
        let c = RunConfig::resolve(Some(&p), &["lambda=1".into(), "augment.enabled=false".into()]).unwrap();
        assert_eq!(c.train.lambda, 1.0);
        assert_eq!(c.train.augment.rotation_degrees, 3.0);
        assert!(!c.train.augment.enabled);
        assert_eq!(c.dataset.as_deref(), Some("d.json"));
        assert_eq!(c.train.lambda_prime, 10.0);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::resolve(None, &["lamda=1".into()]).is_err());
        assert!(RunConfig::resolve(None, &["lambda=-1".into()]).is_err());
    }

    #[test]
    fn echo_round_trips() {
        let c = RunConfig::resolve(None, &["subsample=30".into(), "seed=4".into()]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("echo.json");
        fs::write(&p, c.to_json()).unwrap();
        let back = RunConfig::resolve(Some(&p), &[]).unwrap();
        assert_eq!(back.train, c.train);
        assert_eq!(back.subsample, Some(30));
    }
}
