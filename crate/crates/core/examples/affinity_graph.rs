//! kNN heat-kernel graph, Laplacian, and the F-norm reweighting.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use ttpudr::graph::{build_affinity, reweight, suggest_kernel_width};
use ttpudr::synth::{two_clusters, TwoClusterSpec};
use ttpudr::TtMap;

fn main() -> ttpudr::Result<()> {
    let data = two_clusters(&TwoClusterSpec { samples: 40, ..Default::default() })?;
    let flat: Vec<&[f64]> = data.samples().iter().map(|s| s.data()).collect();
    let t = suggest_kernel_width(&flat, 5)?;
    let g = build_affinity(data.samples(), 5, t)?;
    let edges = g.edges();
    let cross = edges.iter().filter(|&&(i, j, _)| data.labels()[i] != data.labels()[j]).count();
    println!("kernel width {t:.3}: {} edges, {cross} between classes", edges.len());
    println!("degree range {:.3}..{:.3}", g.degrees().min(), g.degrees().max());
    let row_sum: f64 = g.laplacian().row(0).sum();
    println!("Laplacian row sums vanish: {row_sum:.1e}");

    // s̃ᵢⱼ = sᵢⱼ / max(‖tᵢ − tⱼ‖, ε) under a random map
    let map = TtMap::random_orthonormal(&[4, 4, 4], &[2, 2], 2, &mut ChaCha8Rng::seed_from_u64(0))?;
    let rw = reweight(&g, &map, data.samples(), 1e-8)?;
    println!("reweighted: {} edges, {} guarded by ε", rw.edges().len(), rw.guarded_pairs());
    Ok(())
}
