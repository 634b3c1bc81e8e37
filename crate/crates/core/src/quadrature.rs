//! Gauss rules on intervals and triangles, used for load vectors of
//! smooth (non-polynomial) data.

use std::f64::consts::PI;

use crate::Real;

/// Gauss-Legendre nodes and weights on `[0, 1]`.
pub fn gauss_legendre_unit<T: Real>(order: usize) -> Vec<(T, T)> {
    let n = order.max(1);
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        // Newton on P_n starting from the Chebyshev-like guess
        let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let pn = if n == 1 { x } else { p1 };
            let pnm1 = if n == 1 { 1.0 } else { p0 };
            dp = n as f64 * (x * pn - pnm1) / (x * x - 1.0);
            let dx = pn / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        out.push((T::lit(0.5 * (1.0 - x)), T::lit(0.5 * w)));
    }
    out.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite nodes"));
    out
}

/// Point on the reference triangle `(0,0), (1,0), (0,1)` with its weight
/// (weights sum to 1/2).
#[derive(Debug, Clone, Copy)]
pub struct TrianglePoint<T> {
    pub xi: T,
    pub eta: T,
    pub weight: T,
}

/// Collapsed (Duffy) tensor Gauss rule with `order^2` points; exact for
/// polynomials of total degree `2 * order - 2`.
pub fn triangle_rule<T: Real>(order: usize) -> Vec<TrianglePoint<T>> {
    let g = gauss_legendre_unit::<T>(order);
    let mut pts = Vec::with_capacity(g.len() * g.len());
    for &(u, wu) in &g {
        for &(v, wv) in &g {
            pts.push(TrianglePoint {
                xi: u,
                eta: v * (T::one() - u),
                weight: wu * wv * (T::one() - u),
            });
        }
    }
    pts
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interval_rule_integrates_monomials() {
        let g = gauss_legendre_unit::<f64>(5);
        for p in 0..10 {
            let q: f64 = g.iter().map(|&(x, w)| w * x.powi(p)).sum();
            assert!((q - 1.0 / (p as f64 + 1.0)).abs() < 1e-14, "degree {p}");
        }
    }

    #[test]
    fn triangle_rule_integrates_monomials() {
        // int_T xi^p eta^q = p! q! / (p + q + 2)!
        let fact = |k: u32| (1..=k).map(f64::from).product::<f64>();
        let r = triangle_rule::<f64>(6);
        for p in 0..6u32 {
            for q in 0..(10 - p) {
                let exact = fact(p) * fact(q) / fact(p + q + 2);
                let s: f64 = r.iter().map(|t| t.weight * t.xi.powi(p as i32) * t.eta.powi(q as i32)).sum();
                assert!((s - exact).abs() < 1e-15, "p={p} q={q}");
            }
        }
    }
}
