#![allow(dead_code)]

use dcfae::datasets::{ImageDataset, ImageSet, Labels};
use dcfae::trainer::TrainConfig;
use ndarray::Array4;

/// Small nets on an 8x8 canvas: fast enough for many epochs in a test.
pub fn tiny_config() -> TrainConfig {
    TrainConfig {
        latent_dim: 3,
        batch_size: 4,
        pretrain_epochs: 2,
        finetune_epochs: 2,
        clusters: 2,
        seed: 7,
        filters: vec![2, 2],
        discriminator_filters: vec![2, 2],
        head_hidden: vec![6, 6, 8],
        learning_rate: 1e-3,
        lambda: 1.0,
        rho: 5.0,
        ..TrainConfig::default()
    }
}

/// Two classes of soft square blobs at class-specific positions, each
/// jittered by up to one pixel.
pub fn blobs(n: usize, side: usize) -> ImageDataset {
    let mut imgs = Array4::<f32>::zeros((n, side, side, 1));
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let class = i % 2;
        let jitter = (i / 2 % 3) as isize - 1;
        let (cy, cx) = if class == 0 {
            (side as isize / 4 + jitter, side as isize / 4)
        } else {
            (3 * side as isize / 4, 3 * side as isize / 4 + jitter)
        };
        for y in 0..side {
            for x in 0..side {
                let d2 = ((y as isize - cy).pow(2) + (x as isize - cx).pow(2)) as f32;
                imgs[[i, y, x, 0]] = (-d2 / (side as f32 / 4.0)).exp();
            }
        }
        labels.push(class);
    }
    ImageDataset::new(
        "blobs",
        ImageSet::new(imgs).unwrap(),
        Some(Labels::new(labels, 2).unwrap()),
        2,
    )
    .unwrap()
}
