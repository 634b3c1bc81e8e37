//! Identification of the scalar diffusion coefficient in pure-Neumann
//! elliptic problems by elliptic regularization.
//!
//! The forward problem `-div(a grad u) = f` with Neumann data `g` only
//! determines `u` up to a constant. Adding `eps * S(u, v)` with the full
//! H1 inner product `S` restores unique solvability, which makes the
//! parameter-to-state map single valued and smooth. On top of that map the
//! crate provides:
//!
//! * P1 finite element assembly on structured triangulations of the unit
//!   square ([`mesh`], [`assembly`]),
//! * regularized state, sensitivity and adjoint solves ([`forward`]),
//! * output least-squares (OLS) and modified OLS (MOLS) objectives with
//!   gradients and Hessians through two independent routes ([`objectives`]),
//! * limit checks of the first- and second-order derivative
//!   characterizations of the set-valued solution map ([`setvalued`]),
//! * box-constrained projected gradient / projected Newton minimization
//!   along a regularization schedule ([`optimizer`]),
//! * seeded data and functional perturbations ([`noise`]).
//!
//! All numerical code is generic over the scalar type through [`Real`];
//! the aliases at the crate root fix it to `f64` (and a few to `f32`).

pub mod assembly;
pub mod error;
pub mod forward;
pub mod linalg;
pub mod manufactured;
pub mod mesh;
pub mod noise;
pub mod objectives;
pub mod optimizer;
pub mod quadrature;
pub mod real;
pub mod setvalued;
pub mod sparse;

pub use error::{Error, Result};
pub use real::Real;

pub type Mesh = mesh::Mesh<f64>;
pub type P1Space = mesh::P1Space<f64>;
pub type SparseSymMatrix = sparse::SparseSymMatrix<f64>;
pub type AdmissibleParameter = assembly::AdmissibleParameter<f64>;
pub type RegularizedForwardOperator = forward::RegularizedForwardOperator<f64>;
pub type RegularizationSchedule = forward::RegularizationSchedule<f64>;
pub type ObjectiveReport = objectives::ObjectiveReport<f64>;
pub type Regularizer = objectives::Regularizer<f64>;
pub type ReconstructionResult = optimizer::ReconstructionResult<f64>;
pub type ManufacturedProblem = manufactured::ManufacturedProblem<f64>;

pub type MeshF32 = mesh::Mesh<f32>;
pub type SparseSymMatrixF32 = sparse::SparseSymMatrix<f32>;
