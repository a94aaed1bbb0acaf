//! Image datasets: loading, resizing, augmentation and batching.
//!
//! Ground-truth labels live in [`Labels`], which training code never sees:
//! the trainer accepts an [`ImageSet`] only.

mod batch;
mod idx;
mod manifest;
mod png_dir;
mod transform;

use ndarray::{Array4, ArrayView4, Axis};
use rand::seq::SliceRandom;

use crate::{Error, Result};

pub use batch::{batches, BatchPlan};
pub use idx::{load_idx, read_idx_images, read_idx_labels, write_idx_images, write_idx_labels};
pub use manifest::{load_manifest, DatasetFormat, DatasetManifest};
pub use png_dir::load_png_dir;
pub use transform::{augment, resize_images, resize_to_canvas, AugmentConfig};

/// Pixel data `[count, height, width, channels]` with values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageSet {
    images: Array4<f32>,
}

impl ImageSet {
    pub fn new(images: Array4<f32>) -> Result<Self> {
        let (n, h, w, c) = images.dim();
        if n == 0 {
            return Err(Error::EmptyDataset("image set has no images".into()));
        }
        if h == 0 || w == 0 || c == 0 {
            return Err(Error::Shape(format!("degenerate image shape {h}x{w}x{c}")));
        }
        if let Some(bad) = images.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::Consistency(format!("pixel value {bad} outside [0, 1]")));
        }
        Ok(Self { images })
    }

    pub fn len(&self) -> usize {
        self.images.dim().0
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn height(&self) -> usize {
        self.images.dim().1
    }

    pub fn width(&self) -> usize {
        self.images.dim().2
    }

    pub fn channels(&self) -> usize {
        self.images.dim().3
    }

    /// Scalars per image.
    pub fn pixels_per_image(&self) -> usize {
        self.height() * self.width() * self.channels()
    }

    pub fn view(&self) -> ArrayView4<'_, f32> {
        self.images.view()
    }

    pub fn into_array(self) -> Array4<f32> {
        self.images
    }

    /// Copies the images at `indices` into a new batch array.
    pub fn gather(&self, indices: &[usize]) -> Array4<f32> {
        self.images.select(Axis(0), indices)
    }
}

/// Ground-truth class ids, used only for evaluation.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Labels {
    values: Vec<usize>,
    num_classes: usize,
}

impl Labels {
    pub fn new(values: Vec<usize>, num_classes: usize) -> Result<Self> {
        if num_classes == 0 {
            return Err(Error::Config("num_classes must be positive".into()));
        }
        if let Some(bad) = values.iter().find(|&&v| v >= num_classes) {
            return Err(Error::Consistency(format!(
                "label {bad} outside 0..{num_classes}"
            )));
        }
        Ok(Self {
            values,
            num_classes,
        })
    }

    pub fn values(&self) -> &[usize] {
        &self.values
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

#[derive(Clone, Debug)]
pub struct ImageDataset {
    pub name: String,
    pub images: ImageSet,
    pub labels: Option<Labels>,
    pub num_classes: usize,
}

impl ImageDataset {
    pub fn new(
        name: impl Into<String>,
        images: ImageSet,
        labels: Option<Labels>,
        num_classes: usize,
    ) -> Result<Self> {
        if num_classes == 0 {
            return Err(Error::Config("num_classes must be positive".into()));
        }
        if let Some(l) = &labels {
            if l.len() != images.len() {
                return Err(Error::Consistency(format!(
                    "{} labels for {} images",
                    l.len(),
                    images.len()
                )));
            }
            if l.num_classes() != num_classes {
                return Err(Error::Consistency(format!(
                    "labels declare {} classes, dataset {}",
                    l.num_classes(),
                    num_classes
                )));
            }
        }
        Ok(Self {
            name: name.into(),
            images,
            labels,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// Random subset of `count` images (all of them if `count >= len`),
    /// drawn deterministically from `seed` and kept in original order.
    pub fn subsample(&self, count: usize, seed: u64) -> Result<Self> {
        if count >= self.len() {
            return Ok(self.clone());
        }
        if count == 0 {
            return Err(Error::Config("subsample size must be positive".into()));
        }
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.shuffle(&mut crate::rng::stream(seed, &[crate::rng::SUBSAMPLE]));
        idx.truncate(count);
        idx.sort_unstable();
        let images = ImageSet::new(self.images.gather(&idx))?;
        let labels = match &self.labels {
            Some(l) => Some(Labels::new(
                idx.iter().map(|&i| l.values[i]).collect(),
                l.num_classes,
            )?),
            None => None,
        };
        Self::new(self.name.clone(), images, labels, self.num_classes)
    }

    /// Splits off the labels so the images can be handed to training code.
    pub fn split(self) -> (ImageSet, Option<Labels>) {
        (self.images, self.labels)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_out_of_range_pixels() {
        let a = Array4::from_elem((1, 2, 2, 1), 1.5f32);
        assert!(matches!(ImageSet::new(a), Err(Error::Consistency(_))));
    }

    #[test]
    fn rejects_labels_outside_class_range() {
        assert!(Labels::new(vec![0, 3], 3).is_err());
        assert!(Labels::new(vec![0, 2], 3).is_ok());
    }

    #[test]
    fn subsample_is_deterministic_and_keeps_labels_aligned() {
        let imgs = Array4::from_shape_fn((20, 1, 1, 1), |(i, _, _, _)| i as f32 / 20.0);
        let labels = Labels::new((0..20).map(|i| i % 4).collect(), 4).unwrap();
        let ds = ImageDataset::new("t", ImageSet::new(imgs).unwrap(), Some(labels), 4).unwrap();
        let a = ds.subsample(7, 11).unwrap();
        let b = ds.subsample(7, 11).unwrap();
        assert_eq!(a.images, b.images);
        assert_eq!(a.len(), 7);
        let l = a.labels.unwrap();
        for (i, &lab) in l.values().iter().enumerate() {
            let orig = (a.images.view()[[i, 0, 0, 0]] * 20.0).round() as usize;
            assert_eq!(lab, orig % 4);
        }
    }
}
