//! Solvers and verification tools for the evolutionary N-membranes problem
//! with the p-Laplacian: `u_1 >= u_2 >= ... >= u_N`, each component driven by
//! `d_t u_i - div(|grad u_i|^{p-2} grad u_i) = f_i` away from contact, with
//! homogeneous Dirichlet data.
//!
//! Two independent discretizations are provided: a bounded penalization
//! marched by semismooth Newton ([`evolution`]) and a projected Gauss-Seidel
//! solver for the variational inequality ([`vi_oracle`]).

pub mod coincidence;
pub mod config;
pub mod error;
pub mod evolution;
pub mod experiments;
pub mod grid;
pub mod linalg;
pub mod output;
pub mod p_laplacian;
pub mod penalty;
pub mod vi_oracle;

pub use error::{Error, Result};
pub use grid::{GridSpec, MultiField, ScalarField};
pub use p_laplacian::PFluxParams;
pub use penalty::PenaltyParams;
