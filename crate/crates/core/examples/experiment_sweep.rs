//! A seeded sweep over methods, shuffles and target dimensions from a TOML spec.

use ttpudr::experiment::{aggregate_csv, plot_csv, run_experiment, ExperimentSpec};

const SPEC: &str = r#"
methods = ["ttpudr", "pca", "lpp"]
target_dims = [1, 2, 3]
shuffles = 3
train_fraction = 0.3
seed = 2024

[dataset]
kind = "two_clusters"
synthetic = { samples = 120, separation = 6.0 }

[noise]
fraction = 0.1
block = 2

[settings.train]
ranks = [2, 2]
max_outer_iters = 10
"#;

fn main() -> ttpudr::Result<()> {
    let mut spec = ExperimentSpec::from_toml(SPEC)?;
    // reshape the 4x4x4 tensors into 8x8 "images" so block noise has two spatial modes
    spec.dataset.reshape = Some(vec![8, 8]);
    spec.settings.train.ranks = vec![2];
    let outcome = run_experiment(&spec)?;
    print!("{}", aggregate_csv(&outcome.aggregate));
    println!();
    print!("{}", plot_csv(&outcome.aggregate, &spec));
    println!("{} training traces recorded", outcome.traces.len());
    Ok(())
}
