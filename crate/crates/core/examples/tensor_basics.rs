//! Dense tensors: first-mode-fastest storage, unfoldings, permutation and contraction.

use ttpudr::tensor::contract;
use ttpudr::DenseTensor;

fn main() -> ttpudr::Result<()> {
    // entry (i, j, k) = 100i + 10j + k
    let x = DenseTensor::from_fn(&[2, 3, 4], |idx| (100 * idx[0] + 10 * idx[1] + idx[2]) as f64)?;
    println!("shape {:?}, {} entries, first few {:?}", x.shape(), x.len(), &x.data()[..4]);

    // left unfolding: rows = (i, j), columns = k
    let left = x.left_unfold()?;
    println!("left unfolding is {}x{}", left.nrows(), left.ncols());

    let p = x.permute(&[2, 0, 1])?;
    println!("permuted shape {:?}, p[3,1,2] = {}", p.shape(), p.get(&[3, 1, 2])?);

    // contract mode 2 of x with mode 0 of a 4x2 matrix
    let w = DenseTensor::from_fn(&[4, 2], |idx| if idx[0] == idx[1] { 1.0 } else { 0.0 })?;
    let y = contract(&x, &w, &[2], &[0])?;
    println!("x ×₃ W has shape {:?}, y[1,2,1] = {}", y.shape(), y.get(&[1, 2, 1])?);
    println!("‖x‖_F = {:.3}", x.fro_norm());
    Ok(())
}
