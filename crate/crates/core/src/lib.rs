//! Monte Carlo solver and verification suite for complement value problems
//! of the mixed local/fractional operator
//! `Delta + a^alpha Delta^{alpha/2} + b . grad + c + div b_hat` on a bounded
//! Lipschitz domain, with data prescribed on the whole complement.
//!
//! The crate provides:
//! - coefficient expressions with symbolic differentiation ([`expr`]),
//! - domain geometry ([`domain`]),
//! - exact-in-law noise sampling ([`stable`]),
//! - exit-time path simulation ([`path`]),
//! - the mollification ladder for rough lower-order coefficients ([`mollify`]),
//! - the Feynman-Kac solver with moment diagnostics ([`fk`]),
//! - closed-form kernel constants and bound checkers ([`kernels`]),
//! - an independent weak-formulation residual checker ([`weakform`]).

pub mod domain;
pub mod expr;
pub mod fk;
pub mod kernels;
pub mod mollify;
pub mod path;
pub mod quad;
pub mod stable;
pub mod weakform;

pub use domain::{Domain, DomainError, GeometryConstants, HalfSpace};
pub use expr::{
    ConstField, Derivative, EvalError, Expression, FnField, ParseError, ScalarField, VectorExpression,
    VectorField,
};
pub use fk::{ProblemSpec, SolveConfig};
pub use path::{Estimate, ExitSample, PathConfig, ProcessSpec};
pub use stable::{NoiseParams, RngStream};
