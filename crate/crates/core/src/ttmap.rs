//! Tensor-train parameterized linear maps.
//!
//! A [`TtMap`] is a chain of 3-order cores `U_k ∈ ℝ^{R_{k-1} × I_k × R_k}`
//! with `R_0 = 1`. Chaining the cores gives a tensor of shape
//! `I_1 × ⋯ × I_n × R_n`; its left unfolding `E` (a `D × R_n` matrix with
//! `D = I_1⋯I_n`) is the reduction mapping, `t = Eᵀ vec(X)`.
//!
//! [`TtMap::apply`] never builds `E`: it sweeps the cores over the sample one
//! mode at a time, so the cost stays polynomial in the ranks.
//!
//! # Binary model format (version 1)
//!
//! All integers and floats are little-endian.
//!
//! | bytes | content |
//! |-------|---------|
//! | 4     | magic `b"TTMP"` |
//! | 1     | format version, `1` |
//! | 4     | `u32` number of cores `n` |
//! | 24·n  | per core: `u64` left rank, `u64` mode size, `u64` right rank |
//! | 8·Σ   | core entries as `f64`, core by core, each in first-mode-fastest order |

use std::io::{Read, Write};

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::stiefel::orthonormal_factor;
use crate::tensor::DenseTensor;
use crate::{Error, Result};

/// Default ceiling on the number of elements [`TtMap::full_chain`] may materialise.
pub const DEFAULT_ELEMENT_CAP: usize = 10_000_000;

const MODEL_MAGIC: &[u8; 4] = b"TTMP";
const MODEL_VERSION: u8 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct TtCore {
    tensor: DenseTensor,
}

impl TtCore {
    pub fn new(tensor: DenseTensor) -> Result<Self> {
        if tensor.order() != 3 {
            return Err(Error::shape(format!(
                "a core must have 3 modes, got shape {:?}",
                tensor.shape()
            )));
        }
        Ok(Self { tensor })
    }

    pub fn from_data(left_rank: usize, mode_size: usize, right_rank: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(DenseTensor::new(vec![left_rank, mode_size, right_rank], data)?)
    }

    /// Rebuilds a core from its `(R_{k-1}·I_k) × R_k` left unfolding.
    pub fn from_left_unfolding(m: &DMatrix<f64>, left_rank: usize, mode_size: usize) -> Result<Self> {
        if m.nrows() != left_rank * mode_size {
            return Err(Error::shape(format!(
                "left unfolding has {} rows, expected {left_rank}·{mode_size}",
                m.nrows()
            )));
        }
        Self::from_data(left_rank, mode_size, m.ncols(), m.as_slice().to_vec())
    }

    /// Gaussian entries, then the left unfolding replaced by its orthonormal factor.
    pub fn random_orthonormal<R: Rng + ?Sized>(
        left_rank: usize,
        mode_size: usize,
        right_rank: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if right_rank > left_rank * mode_size {
            return Err(Error::invalid(format!(
                "core {left_rank}×{mode_size}×{right_rank} cannot have orthonormal columns"
            )));
        }
        let rows = left_rank * mode_size;
        let g = DMatrix::from_fn(rows, right_rank, |_, _| rng.sample::<f64, _>(StandardNormal));
        let q = orthonormal_factor(&g)?;
        Self::from_left_unfolding(&q, left_rank, mode_size)
    }

    pub fn left_rank(&self) -> usize {
        self.tensor.shape()[0]
    }

    pub fn mode_size(&self) -> usize {
        self.tensor.shape()[1]
    }

    pub fn right_rank(&self) -> usize {
        self.tensor.shape()[2]
    }

    pub fn tensor(&self) -> &DenseTensor {
        &self.tensor
    }

    pub fn data(&self) -> &[f64] {
        self.tensor.data()
    }

    pub fn param_count(&self) -> usize {
        self.tensor.len()
    }

    pub fn left_unfold(&self) -> DMatrix<f64> {
        DMatrix::from_column_slice(self.left_rank() * self.mode_size(), self.right_rank(), self.data())
    }

    /// `R_{k-1} × (I_k·R_k)` matricization.
    pub fn right_unfold(&self) -> DMatrix<f64> {
        DMatrix::from_column_slice(self.left_rank(), self.mode_size() * self.right_rank(), self.data())
    }

    /// Lateral slice `U(:, i, :)` as an `R_{k-1} × R_k` matrix.
    pub fn slice(&self, i: usize) -> DMatrix<f64> {
        let (rl, m) = (self.left_rank(), self.mode_size());
        DMatrix::from_fn(rl, self.right_rank(), |a, b| self.data()[a + rl * (i + m * b)])
    }

    /// `‖L(U)ᵀL(U) − I‖_F`.
    pub fn gram_defect(&self) -> f64 {
        let l = self.left_unfold();
        let r = l.ncols();
        (l.transpose() * l - DMatrix::identity(r, r)).norm()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TtMap {
    cores: Vec<TtCore>,
}

impl TtMap {
    pub fn new(cores: Vec<TtCore>) -> Result<Self> {
        if cores.is_empty() {
            return Err(Error::invalid("a tensor-train map needs at least one core"));
        }
        if cores[0].left_rank() != 1 {
            return Err(Error::shape(format!(
                "first core must have left rank 1, got {}",
                cores[0].left_rank()
            )));
        }
        for (k, pair) in cores.windows(2).enumerate() {
            if pair[0].right_rank() != pair[1].left_rank() {
                return Err(Error::shape(format!(
                    "core {k} has right rank {} but core {} has left rank {}",
                    pair[0].right_rank(),
                    k + 1,
                    pair[1].left_rank()
                )));
            }
        }
        Ok(Self { cores })
    }

    /// Random map with left-orthonormal cores.
    ///
    /// `inner_ranks` are `R_1,…,R_{n-1}` (one fewer than `mode_sizes`).
    pub fn random_orthonormal<R: Rng + ?Sized>(
        mode_sizes: &[usize],
        inner_ranks: &[usize],
        target_dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let ranks = full_ranks(mode_sizes, inner_ranks, target_dim)?;
        check_rank_feasibility(mode_sizes, &ranks)?;
        let cores = mode_sizes
            .iter()
            .enumerate()
            .map(|(k, &m)| TtCore::random_orthonormal(ranks[k], m, ranks[k + 1], rng))
            .collect::<Result<Vec<_>>>()?;
        Self::new(cores)
    }

    pub fn order(&self) -> usize {
        self.cores.len()
    }

    pub fn cores(&self) -> &[TtCore] {
        &self.cores
    }

    pub fn core(&self, k: usize) -> &TtCore {
        &self.cores[k]
    }

    /// Replaces core `k`; the new core must have the same shape.
    pub fn set_core(&mut self, k: usize, core: TtCore) -> Result<()> {
        let old = self
            .cores
            .get(k)
            .ok_or_else(|| Error::Index(format!("core {k} of {}", self.cores.len())))?;
        if old.tensor.shape() != core.tensor.shape() {
            return Err(Error::shape(format!(
                "replacement core {:?} does not match {:?}",
                core.tensor.shape(),
                old.tensor.shape()
            )));
        }
        self.cores[k] = core;
        Ok(())
    }

    pub fn mode_sizes(&self) -> Vec<usize> {
        self.cores.iter().map(TtCore::mode_size).collect()
    }

    /// `[R_0, R_1, …, R_n]`.
    pub fn ranks(&self) -> Vec<usize> {
        std::iter::once(1).chain(self.cores.iter().map(TtCore::right_rank)).collect()
    }

    pub fn target_dim(&self) -> usize {
        self.cores.last().unwrap().right_rank()
    }

    pub fn input_dim(&self) -> usize {
        self.cores.iter().map(TtCore::mode_size).product()
    }

    pub fn param_count(&self) -> usize {
        self.cores.iter().map(TtCore::param_count).sum()
    }

    /// The chained tensor `I_1 × ⋯ × I_n × R_n`, guarded by an element cap.
    pub fn full_chain(&self, cap: usize) -> Result<DenseTensor> {
        let needed = self.input_dim() * self.target_dim();
        if needed > cap {
            return Err(Error::ElementCap { needed, cap });
        }
        let m = prefix_chain(&self.cores);
        let mut shape = self.mode_sizes();
        shape.push(self.target_dim());
        DenseTensor::new(shape, m.as_slice().to_vec())
    }

    /// Maps one sample to `ℝ^{R_n}` by sequential mode-by-mode contraction.
    pub fn apply(&self, x: &DenseTensor) -> Result<Vec<f64>> {
        self.check_sample(x)?;
        Ok(contract_cores(x.data(), &self.cores).as_slice().to_vec())
    }

    /// Maps many samples at once; column `i` of the `R_n × N` result is sample `i`.
    pub fn apply_batch(&self, samples: &[DenseTensor]) -> Result<DMatrix<f64>> {
        let mut buf = Vec::with_capacity(self.input_dim() * samples.len());
        for x in samples {
            self.check_sample(x)?;
            buf.extend_from_slice(x.data());
        }
        Ok(contract_cores(&buf, &self.cores))
    }

    pub(crate) fn check_sample(&self, x: &DenseTensor) -> Result<()> {
        let modes = self.mode_sizes();
        if x.shape() != modes.as_slice() {
            return Err(Error::shape(format!(
                "sample shape {:?} does not match map modes {modes:?}",
                x.shape()
            )));
        }
        Ok(())
    }

    /// `‖EᵀE − I‖_F`, computed by accumulating the Gram matrix through the
    /// chain so `E` is never formed.
    pub fn orthonormality_defect(&self) -> f64 {
        let mut gram = DMatrix::from_element(1, 1, 1.0);
        for core in &self.cores {
            let r = core.right_rank();
            let mut next = DMatrix::zeros(r, r);
            for i in 0..core.mode_size() {
                let s = core.slice(i);
                next += s.transpose() * &gram * &s;
            }
            gram = next;
        }
        let r = gram.nrows();
        (gram - DMatrix::identity(r, r)).norm()
    }

    /// Same quantity as [`orthonormality_defect`](Self::orthonormality_defect)
    /// via the materialised mapping matrix.
    pub fn orthonormality_defect_explicit(&self, cap: usize) -> Result<f64> {
        let e = self.full_chain(cap)?.left_unfold()?;
        let r = e.ncols();
        Ok((e.transpose() * &e - DMatrix::identity(r, r)).norm())
    }

    /// Per-core `‖L(U_k)ᵀL(U_k) − I‖_F`.
    pub fn core_defects(&self) -> Vec<f64> {
        self.cores.iter().map(TtCore::gram_defect).collect()
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MODEL_MAGIC)?;
        w.write_all(&[MODEL_VERSION])?;
        w.write_all(&(self.cores.len() as u32).to_le_bytes())?;
        for c in &self.cores {
            for dim in [c.left_rank(), c.mode_size(), c.right_rank()] {
                w.write_all(&(dim as u64).to_le_bytes())?;
            }
        }
        for c in &self.cores {
            for v in c.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MODEL_MAGIC {
            return Err(Error::format("not a TT model file (bad magic)"));
        }
        let mut version = [0u8; 1];
        r.read_exact(&mut version)?;
        if version[0] != MODEL_VERSION {
            return Err(Error::format(format!("unsupported model version {}", version[0])));
        }
        let n = read_u32(&mut r)? as usize;
        if n == 0 || n > 4096 {
            return Err(Error::format(format!("implausible core count {n}")));
        }
        let mut shapes = Vec::with_capacity(n);
        for _ in 0..n {
            let dims = [read_u64(&mut r)?, read_u64(&mut r)?, read_u64(&mut r)?];
            let len = dims
                .iter()
                .try_fold(1u64, |acc, &d| acc.checked_mul(d))
                .filter(|&l| l > 0 && l <= 1 << 32)
                .ok_or_else(|| Error::format(format!("implausible core shape {dims:?}")))?;
            shapes.push((dims, len as usize));
        }
        let mut cores = Vec::with_capacity(n);
        for (dims, len) in shapes {
            let mut data = Vec::with_capacity(len);
            for _ in 0..len {
                data.push(read_f64(&mut r)?);
            }
            cores.push(TtCore::from_data(dims[0] as usize, dims[1] as usize, dims[2] as usize, data)?);
        }
        Self::new(cores)
    }
}

/// Assembles `[1, R_1, …, R_{n-1}, R_n]` from the inner ranks and target dimension.
pub fn full_ranks(mode_sizes: &[usize], inner_ranks: &[usize], target_dim: usize) -> Result<Vec<usize>> {
    if mode_sizes.is_empty() {
        return Err(Error::invalid("no modes"));
    }
    if inner_ranks.len() + 1 != mode_sizes.len() {
        return Err(Error::invalid(format!(
            "{} modes need {} inner ranks, got {}",
            mode_sizes.len(),
            mode_sizes.len() - 1,
            inner_ranks.len()
        )));
    }
    let ranks: Vec<usize> = std::iter::once(1)
        .chain(inner_ranks.iter().copied())
        .chain(std::iter::once(target_dim))
        .collect();
    if ranks.contains(&0) || mode_sizes.contains(&0) {
        return Err(Error::invalid("ranks and mode sizes must be positive"));
    }
    Ok(ranks)
}

/// Every left unfolding must be tall enough for orthonormal columns: `R_k ≤ R_{k-1}·I_k`.
pub fn check_rank_feasibility(mode_sizes: &[usize], ranks: &[usize]) -> Result<()> {
    for (k, &m) in mode_sizes.iter().enumerate() {
        if ranks[k + 1] > ranks[k] * m {
            return Err(Error::invalid(format!(
                "rank R_{} = {} exceeds R_{}·I_{} = {}",
                k + 1,
                ranks[k + 1],
                k,
                k + 1,
                ranks[k] * m
            )));
        }
    }
    Ok(())
}

/// Contracts `U_1 ⋯ U_j` into a `(I_1⋯I_j) × R_j` matrix (first mode fastest in the rows).
pub(crate) fn prefix_chain(cores: &[TtCore]) -> DMatrix<f64> {
    let mut acc = DMatrix::from_element(1, 1, 1.0);
    for core in cores {
        // acc: P × R_{k-1};  acc·R(U_k): P × (I_k·R_k), laid out as [P, I_k, R_k]
        let prod = &acc * core.right_unfold();
        let rows = acc.nrows() * core.mode_size();
        acc = DMatrix::from_column_slice(rows, core.right_rank(), prod.as_slice());
    }
    acc
}

/// Contracts `U_{j} ⋯ U_n` into an `R_{j-1} × (I_j⋯I_n·R_n)` matrix.
pub(crate) fn suffix_chain(cores: &[TtCore]) -> DMatrix<f64> {
    let last = cores.last().expect("suffix of at least one core");
    let mut acc = last.right_unfold();
    for core in cores.iter().rev().skip(1) {
        // L(U_k)·acc: (R_{k-1}·I_k) × Q, laid out as [R_{k-1}, I_k, Q]
        let prod = core.left_unfold() * &acc;
        acc = DMatrix::from_column_slice(core.left_rank(), prod.len() / core.left_rank(), prod.as_slice());
    }
    acc
}

/// Sweeps `cores` over a buffer shaped `[R_{j-1}·I_j, I_{j+1}, …, trailing modes]`.
///
/// Returns the `R_k × (remaining modes)` matrix left after the last core in
/// `cores`, laid out first-mode-fastest.
pub(crate) fn contract_cores(data: &[f64], cores: &[TtCore]) -> DMatrix<f64> {
    let mut buf: DMatrix<f64> = DMatrix::from_column_slice(1, data.len(), data);
    for core in cores {
        let rows = core.left_rank() * core.mode_size();
        let cols = buf.len() / rows;
        let view = DMatrix::from_column_slice(rows, cols, buf.as_slice());
        buf = core.left_unfold().tr_mul(&view);
    }
    buf
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}
