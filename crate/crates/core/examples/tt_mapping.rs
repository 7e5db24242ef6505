//! Building a tensor-train map, applying it without forming `E`, and saving it.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use ttpudr::ttmap::DEFAULT_ELEMENT_CAP;
use ttpudr::{DenseTensor, TtMap};

fn main() -> ttpudr::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    // 32x32 images refolded to 4x8x4x8, inner ranks 4,7,4, target dimension 10
    let map = TtMap::random_orthonormal(&[4, 8, 4, 8], &[4, 7, 4], 10, &mut rng)?;
    println!("ranks {:?}, {} parameters vs {} for a dense map", map.ranks(), map.param_count(), 1024 * 10);

    let x = DenseTensor::from_fn(&[4, 8, 4, 8], |i| (i[0] + 2 * i[1] + 3 * i[2] + 5 * i[3]) as f64 / 50.0)?;
    let t = map.apply(&x)?;
    println!("t = {:?}", t.iter().map(|v| format!("{v:.3}")).collect::<Vec<_>>());

    // the same projection through the explicit D x R mapping matrix
    let e = map.full_chain(DEFAULT_ELEMENT_CAP)?.left_unfold()?;
    let dense = e.transpose() * x.vectorize();
    let gap = t.iter().zip(dense.iter()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    println!("max gap to explicit Eᵀx: {gap:.2e}; ‖EᵀE − I‖ = {:.2e}", map.orthonormality_defect());

    let mut bytes = Vec::new();
    map.write_to(&mut bytes)?;
    let back = TtMap::read_from(bytes.as_slice())?;
    println!("model file is {} bytes, round trip equal: {}", bytes.len(), back == map);
    Ok(())
}
