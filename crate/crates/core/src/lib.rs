//! Neural-network surrogates for the parametric diffusion problem
//! `-(a_y u')' = f` on (0, 1) with multilevel-frame preconditioning.
//!
//! The crate provides two evaluation paths for the preconditioned quadratic
//! form: the recursive multilevel synthesis followed by the finest-level
//! stiffness (`nodal_op`), and the factored form that samples frame
//! derivatives at quadrature points and weights them pointwise
//! (`stable_op`). Both are generic over the working precision, including an
//! emulated binary16.

pub mod error;
pub mod experiment;
pub mod fem;
pub mod frames;
pub mod linalg;
pub mod nn;
pub mod nodal_op;
pub mod optim;
pub mod precision;
pub mod stable_op;

pub use error::{Error, Result};
pub use precision::{Half, Real, ScalarKind};

/// Which variational formulation is being minimized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Formulation {
    /// Least squares in `(u, sigma)` with `sigma = a u'`.
    Fosls,
    /// Ritz energy in `u` alone.
    Energy,
}

impl std::fmt::Display for Formulation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Formulation::Fosls => "fosls",
            Formulation::Energy => "energy",
        })
    }
}

impl std::str::FromStr for Formulation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fosls" => Ok(Formulation::Fosls),
            "energy" => Ok(Formulation::Energy),
            other => Err(Error::Usage(format!("unknown formulation '{other}'"))),
        }
    }
}
