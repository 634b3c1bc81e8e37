//! Symmetric sparse matrices on the node graph of a mesh.
//!
//! Storage is CSR with both triangles kept. Values are assembled by a
//! per-row gather over the incident triangles (ascending triangle index),
//! so entry `(i, j)` and entry `(j, i)` sum the same symmetric element
//! contributions in the same order: symmetry holds bit for bit, and the
//! result does not depend on how rows are distributed over threads.

use std::fmt::Write as _;
use std::sync::Arc;

use rayon::prelude::*;

use crate::mesh::Mesh;
use crate::{Error, Real, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SparsityPattern {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
}

impl SparsityPattern {
    /// Node adjacency pattern (node plus its edge neighbours).
    pub fn from_mesh<T: Real>(mesh: &Mesh<T>) -> Self {
        let n = mesh.node_count();
        let mut row_ptr = Vec::with_capacity(n + 1);
        row_ptr.push(0);
        let mut cols = Vec::new();
        let mut row = Vec::new();
        for i in 0..n {
            row.clear();
            for &t in mesh.triangles_of(i) {
                row.extend_from_slice(&mesh.triangles()[t]);
            }
            row.sort_unstable();
            row.dedup();
            cols.extend_from_slice(&row);
            row_ptr.push(cols.len());
        }
        Self { n, row_ptr, cols }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.cols.len()
    }

    pub fn row(&self, i: usize) -> &[usize] {
        &self.cols[self.row_ptr[i]..self.row_ptr[i + 1]]
    }

    fn find(&self, i: usize, j: usize) -> Option<usize> {
        self.row(i).binary_search(&j).ok().map(|k| self.row_ptr[i] + k)
    }

    /// Largest `|i - j|` over stored entries.
    pub fn half_bandwidth(&self) -> usize {
        (0..self.n)
            .flat_map(|i| self.row(i).iter().map(move |&j| i.abs_diff(j)))
            .max()
            .unwrap_or(0)
    }
}

#[derive(Debug, Clone)]
pub struct SparseSymMatrix<T> {
    pattern: Arc<SparsityPattern>,
    values: Vec<T>,
}

impl<T: Real> SparseSymMatrix<T> {
    pub fn zeros(pattern: Arc<SparsityPattern>) -> Self {
        let values = vec![T::zero(); pattern.nnz()];
        Self { pattern, values }
    }

    /// Assembles `sum_e P_e^T local(e) P_e` where `local(e)` must be a
    /// symmetric 3x3 element matrix for triangle `e`.
    pub fn assemble<F>(mesh: &Mesh<T>, pattern: Arc<SparsityPattern>, local: F) -> Self
    where
        F: Fn(usize) -> [[T; 3]; 3] + Sync,
    {
        let locals: Vec<[[T; 3]; 3]> =
            (0..mesh.triangle_count()).into_par_iter().map(&local).collect();
        let mut values = vec![T::zero(); pattern.nnz()];
        let mut rows: Vec<&mut [T]> = Vec::with_capacity(pattern.n);
        let mut rest = values.as_mut_slice();
        for i in 0..pattern.n {
            let (head, tail) = rest.split_at_mut(pattern.row_ptr[i + 1] - pattern.row_ptr[i]);
            rows.push(head);
            rest = tail;
        }
        rows.into_par_iter().enumerate().for_each(|(i, row)| {
            let cols = pattern.row(i);
            for &t in mesh.triangles_of(i) {
                let tri = mesh.triangles()[t];
                let a = tri.iter().position(|&v| v == i).expect("incident triangle");
                for b in 0..3 {
                    let k = cols.binary_search(&tri[b]).expect("pattern covers element");
                    row[k] += locals[t][a][b];
                }
            }
        });
        Self { pattern, values }
    }

    pub fn pattern(&self) -> &Arc<SparsityPattern> {
        &self.pattern
    }

    pub fn dim(&self) -> usize {
        self.pattern.n
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        self.pattern.find(i, j).map_or(T::zero(), |k| self.values[k])
    }

    pub fn row_values(&self, i: usize) -> (&[usize], &[T]) {
        let r = self.pattern.row_ptr[i]..self.pattern.row_ptr[i + 1];
        (&self.pattern.cols[r.clone()], &self.values[r])
    }

    pub fn diagonal(&self) -> Vec<T> {
        (0..self.dim()).map(|i| self.get(i, i)).collect()
    }

    pub fn matvec_into(&self, x: &[T], y: &mut [T]) {
        debug_assert_eq!(x.len(), self.dim());
        for (i, yi) in y.iter_mut().enumerate() {
            let (cols, vals) = self.row_values(i);
            *yi = cols.iter().zip(vals).map(|(&j, &v)| v * x[j]).sum();
        }
    }

    pub fn mul_vec(&self, x: &[T]) -> Result<Vec<T>> {
        Error::check_len("matvec", self.dim(), x.len())?;
        let mut y = vec![T::zero(); self.dim()];
        self.matvec_into(x, &mut y);
        Ok(y)
    }

    /// `x^T A y`.
    pub fn bilinear(&self, x: &[T], y: &[T]) -> T {
        let mut ay = vec![T::zero(); self.dim()];
        self.matvec_into(y, &mut ay);
        crate::linalg::dot(x, &ay)
    }

    /// `self + alpha * other` on a shared pattern.
    pub fn add_scaled(&self, alpha: T, other: &Self) -> Result<Self> {
        if self.pattern != other.pattern {
            return Err(Error::invalid("sparsity patterns differ"));
        }
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(&a, &b)| a + alpha * b)
            .collect();
        Ok(Self {
            pattern: Arc::clone(&self.pattern),
            values,
        })
    }

    pub fn scale(&self, alpha: T) -> Self {
        Self {
            pattern: Arc::clone(&self.pattern),
            values: self.values.iter().map(|&v| alpha * v).collect(),
        }
    }

    /// New matrix on the same pattern with entries `f(i, j, a_ij)`.
    pub fn map_entries(&self, f: impl Fn(usize, usize, T) -> T) -> Self {
        let mut values = Vec::with_capacity(self.nnz());
        for i in 0..self.dim() {
            let (cols, vals) = self.row_values(i);
            values.extend(cols.iter().zip(vals).map(|(&j, &v)| f(i, j, v)));
        }
        Self {
            pattern: Arc::clone(&self.pattern),
            values,
        }
    }

    pub fn max_abs(&self) -> T {
        self.values.iter().fold(T::zero(), |m, v| m.max(v.abs()))
    }

    /// Row-major dense copy (`n * n`).
    pub fn to_dense(&self) -> Vec<T> {
        let n = self.dim();
        let mut d = vec![T::zero(); n * n];
        for i in 0..n {
            let (cols, vals) = self.row_values(i);
            for (&j, &v) in cols.iter().zip(vals) {
                d[i * n + j] = v;
            }
        }
        d
    }

    /// MatrixMarket coordinate text (`symmetric`, lower triangle, 1-based).
    pub fn to_matrix_market(&self) -> String {
        let n = self.dim();
        let lower: Vec<(usize, usize, T)> = (0..n)
            .flat_map(|i| {
                let (cols, vals) = self.row_values(i);
                cols.iter()
                    .zip(vals)
                    .filter(move |(&j, _)| j <= i)
                    .map(move |(&j, &v)| (i, j, v))
                    .collect::<Vec<_>>()
            })
            .collect();
        let mut s = String::from("%%MatrixMarket matrix coordinate real symmetric\n");
        let _ = writeln!(s, "{n} {n} {}", lower.len());
        for (i, j, v) in lower {
            let _ = writeln!(s, "{} {} {:.17e}", i + 1, j + 1, v);
        }
        s
    }
}
