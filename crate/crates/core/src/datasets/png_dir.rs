use std::fs;
use std::path::{Path, PathBuf};

use image::DynamicImage;
use ndarray::Array4;

use super::{ImageDataset, ImageSet, Labels};
use crate::{Error, Result};

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut entries: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            !p.file_name()
                .is_some_and(|n| n.to_string_lossy().starts_with('.'))
        })
        .collect();
    entries.sort();
    Ok(entries)
}

fn pixels(img: &DynamicImage, channels: usize) -> Vec<f32> {
    match channels {
        1 => img.to_luma32f().into_raw(),
        2 => img.to_luma_alpha32f().into_raw(),
        3 => img.to_rgb32f().into_raw(),
        _ => img.to_rgba32f().into_raw(),
    }
}

/// Loads `root/<class>/<image>` trees. Classes are numbered in lexicographic
/// order of their directory names.
pub fn load_png_dir(root: impl AsRef<Path>) -> Result<ImageDataset> {
    let root = root.as_ref();
    let classes: Vec<PathBuf> = sorted_entries(root)?
        .into_iter()
        .filter(|p| p.is_dir())
        .collect();
    if classes.is_empty() {
        return Err(Error::EmptyDataset(format!(
            "{} has no class directories",
            root.display()
        )));
    }
    let mut data = Vec::new();
    let mut labels = Vec::new();
    let mut shape: Option<(usize, usize, usize, PathBuf)> = None;
    for (class, dir) in classes.iter().enumerate() {
        for file in sorted_entries(dir)?.into_iter().filter(|p| p.is_file()) {
            let img = image::open(&file).map_err(|e| Error::Decode {
                path: file.clone(),
                message: e.to_string(),
            })?;
            let c = img.color().channel_count() as usize;
            let (w, h) = (img.width() as usize, img.height() as usize);
            match &shape {
                None => shape = Some((h, w, c, file.clone())),
                Some((h0, w0, c0, first)) => {
                    if *c0 != c {
                        return Err(Error::Consistency(format!(
                            "{} has {c} channels but {} has {c0}",
                            file.display(),
                            first.display()
                        )));
                    }
                    if (*h0, *w0) != (h, w) {
                        return Err(Error::Consistency(format!(
                            "{} is {w}x{h} but {} is {w0}x{h0}",
                            file.display(),
                            first.display()
                        )));
                    }
                }
            }
            data.extend(pixels(&img, c));
            labels.push(class);
        }
    }
    let Some((h, w, c, _)) = shape else {
        return Err(Error::EmptyDataset(format!(
            "{} contains no images",
            root.display()
        )));
    };
    let n = labels.len();
    for p in data.iter_mut() {
        *p = p.clamp(0.0, 1.0);
    }
    let images = ImageSet::new(Array4::from_shape_vec((n, h, w, c), data).expect("sizes checked"))?;
    let k = classes.len();
    let name = root
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    ImageDataset::new(name, images, Some(Labels::new(labels, k)?), k)
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::{GrayImage, Luma, Rgb, RgbImage};

    #[test]
    fn single_class_single_image() {
        let dir = tempfile::tempdir().unwrap();
        fs::create_dir(dir.path().join("obj1")).unwrap();
        GrayImage::from_pixel(4, 3, Luma([255u8]))
            .save(dir.path().join("obj1/a.png"))
            .unwrap();
        let ds = load_png_dir(dir.path()).unwrap();
        assert_eq!(ds.len(), 1);
        assert_eq!(ds.num_classes, 1);
        assert_eq!(ds.images.view().dim(), (1, 3, 4, 1));
        assert!(ds.images.view().iter().all(|&p| p == 1.0));
    }

    #[test]
    fn labels_follow_directory_order() {
        let dir = tempfile::tempdir().unwrap();
        for (class, v) in [("b", 10u8), ("a", 200u8)] {
            fs::create_dir(dir.path().join(class)).unwrap();
            for i in 0..2 {
                RgbImage::from_pixel(2, 2, Rgb([v, v, v]))
                    .save(dir.path().join(format!("{class}/{i}.png")))
                    .unwrap();
            }
        }
        let ds = load_png_dir(dir.path()).unwrap();
        assert_eq!(ds.labels.as_ref().unwrap().values(), &[0, 0, 1, 1]);
        // "a" sorts first and holds the bright images
        assert!(ds.images.view()[[0, 0, 0, 0]] > 0.7);
        assert_eq!(ds.images.channels(), 3);
    }

    #[test]
    fn non_image_file_names_the_file() {
        let dir = tempfile::tempdir().unwrap();
        fs::create_dir(dir.path().join("c")).unwrap();
        fs::write(dir.path().join("c/notes.txt"), "hello").unwrap();
        match load_png_dir(dir.path()) {
            Err(Error::Decode { path, .. }) => assert!(path.ends_with("notes.txt")),
            other => panic!("expected decode error, got {other:?}"),
        }
    }

    #[test]
    fn empty_root_and_mixed_channels() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(load_png_dir(dir.path()), Err(Error::EmptyDataset(_))));
        fs::create_dir(dir.path().join("a")).unwrap();
        GrayImage::new(2, 2).save(dir.path().join("a/0.png")).unwrap();
        RgbImage::new(2, 2).save(dir.path().join("a/1.png")).unwrap();
        assert!(matches!(load_png_dir(dir.path()), Err(Error::Consistency(_))));
    }
}
