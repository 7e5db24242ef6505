//! Dense n-order tensors.
//!
//! Storage is a flat `Vec<f64>` with the **first mode varying fastest**
//! (column-major generalised to n modes). Element `(i₁,…,iₙ)` lives at
//! `i₁ + I₁·(i₂ + I₂·(i₃ + …))`. Indices and mode numbers are zero-based.
//!
//! Because nalgebra matrices are column-major as well, the left unfolding
//! (all modes but the last as rows) and the right unfolding (first mode as
//! rows) are both plain reinterpretations of the data buffer.
//!
//! A tensor with shape `[]` is a scalar holding exactly one element.

use nalgebra::{DMatrix, DVector};

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct DenseTensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl DenseTensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.contains(&0) {
            return Err(Error::shape(format!("mode sizes must be positive, got {shape:?}")));
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::shape(format!(
                "shape {shape:?} needs {expected} elements, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Result<Self> {
        let n = shape.iter().product();
        Self::new(shape.to_vec(), vec![0.0; n])
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: Vec::new(),
            data: vec![value],
        }
    }

    /// Builds a tensor by evaluating `f` at every multi-index, in storage order.
    pub fn from_fn(shape: &[usize], mut f: impl FnMut(&[usize]) -> f64) -> Result<Self> {
        let n: usize = shape.iter().product();
        let mut data = Vec::with_capacity(n);
        let mut idx = vec![0usize; shape.len()];
        for _ in 0..n {
            data.push(f(&idx));
            increment(&mut idx, shape);
        }
        Self::new(shape.to_vec(), data)
    }

    /// Reinterprets a flat vector as a tensor of the given shape (inverse of [`vectorize`](Self::vectorize)).
    pub fn refold(values: &[f64], shape: &[usize]) -> Result<Self> {
        Self::new(shape.to_vec(), values.to_vec())
    }

    /// Wraps a matrix as a 2-mode tensor `[rows, cols]`.
    pub fn from_matrix(m: &DMatrix<f64>) -> Self {
        Self {
            shape: vec![m.nrows(), m.ncols()],
            data: m.as_slice().to_vec(),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn order(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn linear_index(&self, idx: &[usize]) -> Result<usize> {
        if idx.len() != self.shape.len() {
            return Err(Error::Index(format!(
                "expected {} indices, got {}",
                self.shape.len(),
                idx.len()
            )));
        }
        let mut lin = 0;
        let mut stride = 1;
        for (mode, (&i, &size)) in idx.iter().zip(&self.shape).enumerate() {
            if i >= size {
                return Err(Error::Index(format!(
                    "index {i} out of range for mode {mode} of size {size}"
                )));
            }
            lin += i * stride;
            stride *= size;
        }
        Ok(lin)
    }

    pub fn get(&self, idx: &[usize]) -> Result<f64> {
        Ok(self.data[self.linear_index(idx)?])
    }

    pub fn set(&mut self, idx: &[usize], value: f64) -> Result<()> {
        let lin = self.linear_index(idx)?;
        self.data[lin] = value;
        Ok(())
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Self> {
        Self::new(shape.to_vec(), self.data.clone())
    }

    pub fn scaled(&self, alpha: f64) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| v * alpha).collect(),
        }
    }

    /// Reorders modes: output mode `k` is input mode `perm[k]`.
    pub fn permute(&self, perm: &[usize]) -> Result<Self> {
        let n = self.shape.len();
        if perm.len() != n {
            return Err(Error::invalid(format!(
                "permutation of length {} for a {n}-mode tensor",
                perm.len()
            )));
        }
        let mut seen = vec![false; n];
        for &p in perm {
            if p >= n || std::mem::replace(&mut seen[p], true) {
                return Err(Error::invalid(format!("{perm:?} is not a permutation of 0..{n}")));
            }
        }
        if perm.iter().enumerate().all(|(k, &p)| k == p) {
            return Ok(self.clone());
        }
        let in_strides = strides(&self.shape);
        let out_shape: Vec<usize> = perm.iter().map(|&p| self.shape[p]).collect();
        let src_strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
        let mut data = Vec::with_capacity(self.data.len());
        let mut idx = vec![0usize; n];
        for _ in 0..self.data.len() {
            let src: usize = idx.iter().zip(&src_strides).map(|(i, s)| i * s).sum();
            data.push(self.data[src]);
            increment(&mut idx, &out_shape);
        }
        Self::new(out_shape, data)
    }

    /// Rows index every mode but the last; columns index the last mode.
    pub fn left_unfold(&self) -> Result<DMatrix<f64>> {
        if self.order() < 2 {
            return Err(Error::shape(format!(
                "left unfolding needs at least 2 modes, got {}",
                self.order()
            )));
        }
        let cols = *self.shape.last().unwrap();
        let rows = self.data.len() / cols;
        Ok(DMatrix::from_column_slice(rows, cols, &self.data))
    }

    /// Rows index the first mode; columns index all remaining modes.
    pub fn right_unfold(&self) -> Result<DMatrix<f64>> {
        if self.order() < 2 {
            return Err(Error::shape(format!(
                "right unfolding needs at least 2 modes, got {}",
                self.order()
            )));
        }
        let rows = self.shape[0];
        let cols = self.data.len() / rows;
        Ok(DMatrix::from_column_slice(rows, cols, &self.data))
    }

    pub fn vectorize(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.data)
    }

    pub fn fro_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Entrywise ℓ1 norm. Provided for completeness; nothing in training uses it.
    pub fn l1_norm(&self) -> f64 {
        self.data.iter().map(|v| v.abs()).sum()
    }
}

fn strides(shape: &[usize]) -> Vec<usize> {
    let mut out = Vec::with_capacity(shape.len());
    let mut s = 1;
    for &size in shape {
        out.push(s);
        s *= size;
    }
    out
}

/// Advances a multi-index in first-mode-fastest order.
pub(crate) fn increment(idx: &mut [usize], shape: &[usize]) {
    for (i, &size) in idx.iter_mut().zip(shape) {
        *i += 1;
        if *i < size {
            return;
        }
        *i = 0;
    }
}

/// Contracts `x` and `y` over the paired modes `modes_x[k] ↔ modes_y[k]`.
///
/// The result carries the surviving modes of `x` (in order) followed by the
/// surviving modes of `y`. Both operands are permuted so the contracted modes
/// are adjacent, then multiplied as matrices.
pub fn contract(
    x: &DenseTensor,
    y: &DenseTensor,
    modes_x: &[usize],
    modes_y: &[usize],
) -> Result<DenseTensor> {
    if modes_x.len() != modes_y.len() {
        return Err(Error::shape(format!(
            "contracting {} modes of x against {} modes of y",
            modes_x.len(),
            modes_y.len()
        )));
    }
    check_mode_set(modes_x, x.order(), "x")?;
    check_mode_set(modes_y, y.order(), "y")?;
    for (&a, &b) in modes_x.iter().zip(modes_y) {
        if x.shape[a] != y.shape[b] {
            return Err(Error::shape(format!(
                "mode {a} of x has size {} but mode {b} of y has size {}",
                x.shape[a], y.shape[b]
            )));
        }
    }

    let free_x: Vec<usize> = (0..x.order()).filter(|m| !modes_x.contains(m)).collect();
    let free_y: Vec<usize> = (0..y.order()).filter(|m| !modes_y.contains(m)).collect();

    let perm_x: Vec<usize> = free_x.iter().chain(modes_x).copied().collect();
    let perm_y: Vec<usize> = modes_y.iter().chain(&free_y).copied().collect();
    let xp = x.permute(&perm_x)?;
    let yp = y.permute(&perm_y)?;

    let inner: usize = modes_x.iter().map(|&m| x.shape[m]).product();
    let rows: usize = free_x.iter().map(|&m| x.shape[m]).product();
    let cols: usize = free_y.iter().map(|&m| y.shape[m]).product();

    let xm = DMatrix::from_column_slice(rows, inner, &xp.data);
    let ym = DMatrix::from_column_slice(inner, cols, &yp.data);
    let z = xm * ym;

    let shape: Vec<usize> = free_x
        .iter()
        .map(|&m| x.shape[m])
        .chain(free_y.iter().map(|&m| y.shape[m]))
        .collect();
    DenseTensor::new(shape, z.as_slice().to_vec())
}

fn check_mode_set(modes: &[usize], order: usize, name: &str) -> Result<()> {
    for (k, &m) in modes.iter().enumerate() {
        if m >= order {
            return Err(Error::Index(format!(
                "mode {m} out of range for {name} with {order} modes"
            )));
        }
        if modes[..k].contains(&m) {
            return Err(Error::invalid(format!("duplicate mode {m} in index set of {name}")));
        }
    }
    Ok(())
}
