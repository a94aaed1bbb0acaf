use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{load_idx, load_png_dir, resize_to_canvas, ImageDataset};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetFormat {
    Idx,
    PngDir,
}

/// JSON description of a dataset on disk. Relative paths resolve against the
/// manifest's own directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub name: String,
    pub format: DatasetFormat,
    /// IDX image file, or the root directory for `png_dir`.
    pub images: PathBuf,
    #[serde(default)]
    pub labels: Option<PathBuf>,
    #[serde(default)]
    pub num_classes: Option<usize>,
    #[serde(default = "default_canvas")]
    pub canvas_side: usize,
}

fn default_canvas() -> usize {
    32
}

impl DatasetManifest {
    pub fn read(path: impl AsRef<Path>) -> Result<(Self, PathBuf)> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let manifest: Self = serde_json::from_str(&text)?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok((manifest, base))
    }

    /// Loads the images and resizes them to the canvas.
    pub fn load(&self, base: &Path) -> Result<ImageDataset> {
        let resolve = |p: &Path| if p.is_absolute() { p.to_path_buf() } else { base.join(p) };
        let mut ds = match self.format {
            DatasetFormat::Idx => {
                let labels = self.labels.as_deref().map(resolve);
                load_idx(resolve(&self.images), labels.as_deref())?
            }
            DatasetFormat::PngDir => load_png_dir(resolve(&self.images))?,
        };
        if let Some(k) = self.num_classes {
            if let Some(labels) = &ds.labels {
                if labels.num_classes() > k {
                    return Err(Error::Consistency(format!(
                        "manifest declares {k} classes but labels reach {}",
                        labels.num_classes()
                    )));
                }
                let values = labels.values().to_vec();
                ds.labels = Some(super::Labels::new(values, k)?);
            }
            ds.num_classes = k;
        }
        ds.name = self.name.clone();
        resize_to_canvas(ds, self.canvas_side)
    }
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<ImageDataset> {
    let (m, base) = DatasetManifest::read(path)?;
    m.load(&base)
}
