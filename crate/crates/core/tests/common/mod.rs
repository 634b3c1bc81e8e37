#![allow(dead_code)]

use std::sync::Arc;

use coeffid::assembly::Assembler;
use coeffid::mesh::Mesh;
use coeffid::noise::uniform_stream;

pub fn assembler(n: usize) -> Arc<Assembler<f64>> {
    Arc::new(Assembler::new(Arc::new(Mesh::unit_square(n).unwrap())))
}

/// Seeded uniform draws on `[lo, hi)`.
pub fn uniform(seed: u64, len: usize, lo: f64, hi: f64) -> Vec<f64> {
    uniform_stream::<f64>(seed, 7, len)
        .into_iter()
        .map(|u| lo + (hi - lo) * u)
        .collect()
}

pub fn rel_diff(x: &[f64], y: &[f64]) -> f64 {
    let num: f64 = x.iter().zip(y).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let den: f64 = y.iter().map(|b| b * b).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
    num / den
}

pub fn dense(asm: &Assembler<f64>, m: &coeffid::sparse::SparseSymMatrix<f64>) -> nalgebra::DMatrix<f64> {
    let n = asm.dim();
    nalgebra::DMatrix::from_row_slice(n, n, &m.to_dense())
}
