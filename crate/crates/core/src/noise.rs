//! Seeded perturbations of the data and of the source functional.
//!
//! Every draw comes from a ChaCha8 stream keyed by `(seed, stream id)`, so
//! independent experiment cells get independent, reproducible noise with
//! no shared generator state.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::assembly::Assembler;
use crate::linalg;
use crate::{Error, Real, Result};

/// Stream used for the data noise `eta`.
pub const DATA_STREAM: u64 = 1;
/// Stream used for the direction of the functional perturbation.
pub const FUNCTIONAL_STREAM: u64 = 2;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec<T> {
    pub seed: u64,
    /// data noise level
    pub delta: T,
    /// source-functional noise level
    pub nu: T,
    /// operator noise level
    pub tau: T,
}

impl<T: Real> NoiseSpec<T> {
    pub fn new(seed: u64, delta: T, nu: T, tau: T) -> Result<Self> {
        if delta < T::zero() || nu < T::zero() || tau < T::zero() {
            return Err(Error::invalid("noise levels must be >= 0"));
        }
        Ok(Self { seed, delta, nu, tau })
    }

    pub fn clean(seed: u64) -> Self {
        Self {
            seed,
            delta: T::zero(),
            nu: T::zero(),
            tau: T::zero(),
        }
    }
}

/// `n` i.i.d. draws from U[0, 1) on stream `(seed, stream)`.
pub fn uniform_stream<T: Real>(seed: u64, stream: u64, n: usize) -> Vec<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    (0..n).map(|_| T::lit(rng.random::<f64>())).collect()
}

/// `Z + delta * eta` with nodal `eta ~ U[0, 1]`.
pub fn perturb_data<T: Real>(z: &[T], delta: T, seed: u64, stream: u64) -> Vec<T> {
    if delta == T::zero() {
        return z.to_vec();
    }
    let eta = uniform_stream::<T>(seed, stream, z.len());
    z.iter().zip(&eta).map(|(&zi, &e)| zi + delta * e).collect()
}

/// Perturbation direction `p = M r / ||M r||_{W^-1}` with nodal
/// `r ~ U[-1, 1]`, so that `nu * p` has discrete dual norm exactly `nu`.
pub fn functional_direction<T: Real>(asm: &Assembler<T>, seed: u64, stream: u64) -> Result<Vec<T>> {
    let r: Vec<T> = uniform_stream::<T>(seed, stream, asm.dim())
        .into_iter()
        .map(|u| T::lit(2.0) * u - T::one())
        .collect();
    let p = asm.mass().mul_vec(&r)?;
    let norm = asm.dual_norm(&p)?;
    Ok(linalg::scaled(T::one() / norm, &p))
}

/// `P + nu * direction`.
pub fn perturb_functional<T: Real>(p: &[T], nu: T, direction: &[T]) -> Result<Vec<T>> {
    if nu < T::zero() {
        return Err(Error::invalid("functional noise level must be >= 0"));
    }
    Error::check_len("functional perturbation", p.len(), direction.len())?;
    let mut out = p.to_vec();
    linalg::axpy(nu, direction, &mut out);
    Ok(out)
}

/// Checks `||z_delta - z||_{L2} <= delta * |Omega|^{1/2}` (here `|Omega| = 1`).
pub fn data_bound_holds<T: Real>(asm: &Assembler<T>, z: &[T], z_delta: &[T], delta: T) -> bool {
    let d = linalg::sub(z_delta, z);
    let area = asm.l2_norm(&vec![T::one(); z.len()]);
    asm.l2_norm(&d) <= delta * area * (T::one() + T::lit(1e-12))
}

/// Checks `||p_nu - p||_{V*} <= nu` up to rounding.
pub fn functional_bound_holds<T: Real>(asm: &Assembler<T>, p: &[T], p_nu: &[T], nu: T) -> Result<bool> {
    let d = linalg::sub(p_nu, p);
    Ok(asm.dual_norm(&d)? <= nu * (T::one() + T::lit(1e-10)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::Mesh;
    use std::sync::Arc;

    #[test]
    fn zero_delta_leaves_data() {
        let z = vec![0.3, -1.0, 2.0];
        assert_eq!(perturb_data(&z, 0.0, 7, DATA_STREAM), z);
    }

    #[test]
    fn same_seed_same_bits() {
        let a = uniform_stream::<f64>(42, 3, 100);
        let b = uniform_stream::<f64>(42, 3, 100);
        assert_eq!(a, b);
        assert_ne!(a, uniform_stream::<f64>(42, 4, 100));
        assert_ne!(a, uniform_stream::<f64>(43, 3, 100));
    }

    #[test]
    fn uniform_mean() {
        let x = uniform_stream::<f64>(2024, DATA_STREAM, 10_000);
        let mean = x.iter().sum::<f64>() / x.len() as f64;
        assert!((0.49..=0.51).contains(&mean), "{mean}");
        assert!(x.iter().all(|&v| (0.0..1.0).contains(&v)));
    }

    #[test]
    fn negative_levels_rejected() {
        assert!(NoiseSpec::<f64>::new(1, -0.1, 0.0, 0.0).is_err());
        assert!(perturb_functional(&[0.0], -1.0, &[1.0]).is_err());
    }

    #[test]
    fn functional_perturbation_has_dual_norm_nu() {
        let asm = Assembler::<f64>::new(Arc::new(Mesh::unit_square(6).unwrap()));
        let dir = functional_direction(&asm, 5, FUNCTIONAL_STREAM).unwrap();
        let p = vec![0.0; asm.dim()];
        for nu in [0.0, 1e-3, 0.5] {
            let pn = perturb_functional(&p, nu, &dir).unwrap();
            let d = asm.dual_norm(&linalg::sub(&pn, &p)).unwrap();
            assert!((d - nu).abs() < 1e-10, "nu={nu} got {d}");
            assert!(functional_bound_holds(&asm, &p, &pn, nu).unwrap());
        }
        let p1 = perturb_functional(&p, 0.1, &dir).unwrap();
        let p2 = perturb_functional(&p, 0.2, &dir).unwrap();
        for (a, b) in p1.iter().zip(&p2) {
            assert!((2.0 * a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn data_noise_within_bound() {
        let asm = Assembler::<f64>::new(Arc::new(Mesh::unit_square(8).unwrap()));
        let z = vec![0.0; asm.dim()];
        let zd = perturb_data(&z, 0.1, 9, DATA_STREAM);
        assert!(data_bound_holds(&asm, &z, &zd, 0.1));
    }
}
