//! Training TTPUDR on the synthetic two-cluster tensors and reading its trace.

use ttpudr::synth::{two_clusters, TwoClusterSpec};
use ttpudr::{fit, TrainConfig};

fn main() -> ttpudr::Result<()> {
    let data = two_clusters(&TwoClusterSpec::default())?;
    let config = TrainConfig {
        ranks: vec![2, 2],
        target_dim: 2,
        max_outer_iters: 30,
        seed: 7,
        ..TrainConfig::default()
    };
    let (map, trace) = fit(data.samples(), &config)?;
    println!("kernel width {:.3}, converged: {}", trace.kernel_width, trace.converged);
    print!("{}", trace.to_csv());
    println!("orthonormality defect {:.2e}", map.orthonormality_defect());

    // the class mean gap along the learned directions
    let t = map.apply_batch(data.samples())?;
    let mut means = [[0.0; 2]; 2];
    for (j, &l) in data.labels().iter().enumerate() {
        for r in 0..2 {
            means[l][r] += t[(r, j)] / 100.0;
        }
    }
    println!("class means {means:.3?}");
    Ok(())
}
