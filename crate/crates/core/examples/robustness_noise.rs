//! Block salt-and-pepper noise on training images and its effect on each method.

use ttpudr::evalbench::{inject_block_noise, split, NoiseSettings};
use ttpudr::experiment::{evaluate_method, Method, MethodSettings};
use ttpudr::synth::{two_class_images, TwoClusterSpec};
use ttpudr::TrainConfig;

fn main() -> ttpudr::Result<()> {
    let spec = TwoClusterSpec {
        shape: vec![16, 16],
        samples: 300,
        separation: 24.0,
        mode_contrast: 0.5,
        ..Default::default()
    };
    let images = two_class_images(&spec, 6.0)?;
    let s = split(images.labels(), 2, 0.5, 0, true)?;
    let (train, test) = (images.subset(&s.train)?, images.subset(&s.test)?);
    let noise = NoiseSettings { fraction: 0.1, ..Default::default() };
    let (noisy, hit) = inject_block_noise(&train, &noise, 0)?;
    println!("corrupted training images: {hit:?}");

    let settings = MethodSettings {
        train: TrainConfig { ranks: vec![2], ..TrainConfig::default() },
        ..Default::default()
    };
    for method in [Method::Ttpudr, Method::Pca] {
        let clean = evaluate_method(&train, &test, method, 2, &settings, 1)?.result.metrics.oa;
        let dirty = evaluate_method(&noisy, &test, method, 2, &settings, 1)?.result.metrics.oa;
        println!("{:<7} clean OA {clean:.4}, noisy OA {dirty:.4}", method.name());
    }
    Ok(())
}
