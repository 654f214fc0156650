//! Dense f32 kernels and their row-masked variants.
//!
//! Every reduction accumulates in ascending index order, so a masked kernel
//! with a full selection produces the same bits as its dense counterpart.
//! The masked kernels add the number of multiply-accumulates they perform to
//! a caller-supplied counter.

use std::cmp::Ordering;

use crate::error::{Error, Result};

/// Row-major matrix of 32-bit floats.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f32>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    /// Builds a matrix from external data, rejecting wrong lengths and NaN/Inf.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::dim(
                "Matrix::from_vec",
                format!("{} elements for a {rows}x{cols} matrix", data.len()),
            ));
        }
        check_finite("matrix data", &data)?;
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[&[f32]]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::dim("Matrix::from_rows", "ragged rows"));
        }
        Matrix::from_vec(rows.len(), cols, rows.concat())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.data[row * self.cols + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: f32) {
        self.data[row * self.cols + col] = value;
    }

    pub fn row(&self, row: usize) -> &[f32] {
        &self.data[row * self.cols..(row + 1) * self.cols]
    }

    pub fn row_mut(&mut self, row: usize) -> &mut [f32] {
        &mut self.data[row * self.cols..(row + 1) * self.cols]
    }
}

pub(crate) fn check_finite(what: &'static str, values: &[f32]) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(index) => Err(Error::NonFinite { what, index }),
        None => Ok(()),
    }
}

/// Sorted, duplicate-free, non-empty set of positions into a vector of length `bound`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct IndexSet {
    indices: Vec<usize>,
    bound: usize,
}

impl IndexSet {
    pub fn new(indices: Vec<usize>, bound: usize) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::InvalidArgument("index set must not be empty".into()));
        }
        if indices.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidArgument(
                "index set must be strictly increasing".into(),
            ));
        }
        if let Some(&last) = indices.last() {
            if last >= bound {
                return Err(Error::InvalidArgument(format!(
                    "index {last} out of bound {bound}"
                )));
            }
        }
        Ok(IndexSet { indices, bound })
    }

    /// Every position of a vector of length `bound`.
    pub fn full(bound: usize) -> Result<Self> {
        if bound == 0 {
            return Err(Error::InvalidArgument(
                "full selection over an empty vector".into(),
            ));
        }
        Ok(IndexSet {
            indices: (0..bound).collect(),
            bound,
        })
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    /// Always false; kept for the `len`/`is_empty` convention.
    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn bound(&self) -> usize {
        self.bound
    }

    pub fn is_full(&self) -> bool {
        self.indices.len() == self.bound
    }

    pub fn contains(&self, index: usize) -> bool {
        self.indices.binary_search(&index).is_ok()
    }
}

/// Gradient with only a subset of rows materialized; absent rows are zero.
#[derive(Debug, Clone, PartialEq)]
pub struct RowSparse {
    pub selection: IndexSet,
    /// `selection.len() x cols`, row `r` belongs to `selection.indices()[r]`.
    pub rows: Matrix,
}

impl RowSparse {
    pub fn to_dense(&self) -> Matrix {
        let mut out = Matrix::zeros(self.selection.bound(), self.rows.cols());
        for (r, &i) in self.selection.indices().iter().enumerate() {
            out.row_mut(i).copy_from_slice(self.rows.row(r));
        }
        out
    }
}

/// `W · x`, accumulated in ascending column order.
pub fn matvec(w: &Matrix, x: &[f32]) -> Result<Vec<f32>> {
    let mut out = vec![0.0; w.rows];
    matvec_into(w, x, &mut out)?;
    Ok(out)
}

pub(crate) fn matvec_into(w: &Matrix, x: &[f32], out: &mut [f32]) -> Result<()> {
    if w.cols != x.len() || w.rows != out.len() {
        return Err(Error::dim(
            "matvec",
            format!("{}x{} matrix, input {}", w.rows, w.cols, x.len()),
        ));
    }
    for (o, row) in out.iter_mut().zip(w.data.chunks_exact(w.cols.max(1))) {
        let mut acc = 0.0f32;
        for (a, b) in row.iter().zip(x) {
            acc += a * b;
        }
        *o = acc;
    }
    if w.cols == 0 {
        out.fill(0.0);
    }
    Ok(())
}

/// Dense `Wᵀ · d`, accumulated over rows in ascending order.
pub fn matvec_transposed(w: &Matrix, d: &[f32]) -> Result<Vec<f32>> {
    if w.rows != d.len() {
        return Err(Error::dim(
            "matvec_transposed",
            format!("{}x{} matrix, vector {}", w.rows, w.cols, d.len()),
        ));
    }
    let mut out = vec![0.0f32; w.cols];
    for (i, &di) in d.iter().enumerate() {
        axpy(&mut out, w.row(i), di);
    }
    Ok(out)
}

/// `Wᵀ · d` reading only the rows of `W` listed in `sel`.
///
/// `d` is assumed zero outside `sel`; its other entries are never read.
/// The output is dense and costs `|sel| · W.cols` MACs.
pub fn matvec_transposed_masked(
    w: &Matrix,
    d: &[f32],
    sel: &IndexSet,
    macs: &mut u64,
) -> Result<Vec<f32>> {
    if w.rows != d.len() || sel.bound() != w.rows {
        return Err(Error::dim(
            "matvec_transposed_masked",
            format!(
                "{}x{} matrix, vector {}, selection bound {}",
                w.rows,
                w.cols,
                d.len(),
                sel.bound()
            ),
        ));
    }
    let mut out = vec![0.0f32; w.cols];
    for &i in sel.indices() {
        axpy(&mut out, w.row(i), d[i]);
    }
    *macs += (sel.len() * w.cols) as u64;
    Ok(out)
}

#[inline]
fn axpy(out: &mut [f32], row: &[f32], scale: f32) {
    for (o, &v) in out.iter_mut().zip(row) {
        *o += v * scale;
    }
}

/// Dense outer product `d · aᵀ`.
pub fn outer(d: &[f32], a: &[f32]) -> Matrix {
    let mut m = Matrix::zeros(d.len(), a.len());
    for (i, &di) in d.iter().enumerate() {
        for (o, &aj) in m.row_mut(i).iter_mut().zip(a) {
            *o = di * aj;
        }
    }
    m
}

/// Rows `i ∈ sel` of `d · aᵀ`; costs `|sel| · len(a)` MACs.
pub fn outer_masked(d: &[f32], a: &[f32], sel: &IndexSet, macs: &mut u64) -> Result<RowSparse> {
    if sel.bound() != d.len() {
        return Err(Error::dim(
            "outer_masked",
            format!("vector {}, selection bound {}", d.len(), sel.bound()),
        ));
    }
    let mut rows = Matrix::zeros(sel.len(), a.len());
    for (r, &i) in sel.indices().iter().enumerate() {
        let di = d[i];
        for (o, &aj) in rows.row_mut(r).iter_mut().zip(a) {
            *o = di * aj;
        }
    }
    *macs += (sel.len() * a.len()) as u64;
    Ok(RowSparse {
        selection: sel.clone(),
        rows,
    })
}

/// Larger magnitude first; equal magnitudes go to the lower index.
fn magnitude_order(v: &[f32], a: usize, b: usize) -> Ordering {
    v[b].abs()
        .total_cmp(&v[a].abs())
        .then_with(|| a.cmp(&b))
}

/// Indices of the `k` largest `|v[i]|`, returned in ascending index order.
///
/// Uses an introselect partition over the index array followed by a sort of
/// the `k` survivors only.
pub fn top_k(v: &[f32], k: usize) -> Result<IndexSet> {
    if k == 0 || k > v.len() {
        return Err(Error::InvalidArgument(format!(
            "top_k: k = {k} outside [1, {}]",
            v.len()
        )));
    }
    if k == v.len() {
        return IndexSet::full(k);
    }
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.select_nth_unstable_by(k - 1, |&a, &b| magnitude_order(v, a, b));
    idx.truncate(k);
    idx.sort_unstable();
    Ok(IndexSet {
        indices: idx,
        bound: v.len(),
    })
}

/// Copy of `v` with every entry outside `sel` set to 0.
pub fn mask(v: &[f32], sel: &IndexSet) -> Result<Vec<f32>> {
    if sel.bound() != v.len() {
        return Err(Error::dim(
            "mask",
            format!("vector {}, selection bound {}", v.len(), sel.bound()),
        ));
    }
    let mut out = vec![0.0f32; v.len()];
    for &i in sel.indices() {
        out[i] = v[i];
    }
    Ok(out)
}
