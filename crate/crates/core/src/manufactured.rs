//! Manufactured pure-Neumann test problem with known coefficient and state.
//!
//! `a = 1` and `u(x, y) = cos(pi x^2) cos(2 pi y)`, which has zero mean over
//! the unit square. The source is `f = -div(a grad u)` and the Neumann flux
//! `g = a du/dn` (which vanishes identically on the four sides).

use std::marker::PhantomData;

use crate::assembly::LoadData;
use crate::Real;

#[derive(Debug, Clone, Copy, Default)]
pub struct ManufacturedProblem<T> {
    _scalar: PhantomData<T>,
}

impl<T: Real> ManufacturedProblem<T> {
    pub fn new() -> Self {
        Self { _scalar: PhantomData }
    }

    pub fn coefficient(&self, _x: T, _y: T) -> T {
        T::one()
    }

    pub fn state(&self, x: T, y: T) -> T {
        let pi = T::lit(std::f64::consts::PI);
        (pi * x * x).cos() * (T::lit(2.0) * pi * y).cos()
    }

    pub fn state_gradient(&self, x: T, y: T) -> [T; 2] {
        let pi = T::lit(std::f64::consts::PI);
        let two_pi = T::lit(2.0) * pi;
        [
            -two_pi * x * (pi * x * x).sin() * (two_pi * y).cos(),
            -two_pi * (pi * x * x).cos() * (two_pi * y).sin(),
        ]
    }

    /// `-div(grad u)` in closed form (the coefficient is one).
    pub fn source(&self, x: T, y: T) -> T {
        let pi = T::lit(std::f64::consts::PI);
        let two_pi = T::lit(2.0) * pi;
        let four_pi2 = two_pi * two_pi;
        let px2 = pi * x * x;
        (two_pi * px2.sin() + four_pi2 * x * x * px2.cos() + four_pi2 * px2.cos()) * (two_pi * y).cos()
    }

    pub fn flux(&self, x: T, y: T, normal: [T; 2]) -> T {
        let g = self.state_gradient(x, y);
        self.coefficient(x, y) * (g[0] * normal[0] + g[1] * normal[1])
    }

    /// Closures in the form the assembler expects.
    pub fn with_load_data<R>(&self, body: impl FnOnce(&LoadData<'_, T>) -> R) -> R {
        let f = |x: T, y: T| self.source(x, y);
        let g = |x: T, y: T, n: [T; 2]| self.flux(x, y, n);
        let data = LoadData { f: &f, g: &g };
        body(&data)
    }
}
