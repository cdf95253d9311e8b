//! Sparse causal network inference for multivariate autoregressive (MAR)
//! processes.
//!
//! The crate covers the full pipeline around group-sparse structure learning:
//!
//! - [`model`]: MAR model types, builtin example networks and simulation.
//! - [`covariance`]: stationary covariance via the discrete Lyapunov equation,
//!   regression submatrices, predictor matrices and node-power normalization.
//! - [`fcs`]: false connection scores, which predict whether the group lasso
//!   can recover a given network as the number of samples grows.
//! - [`solver`]: per-node regression designs and a block coordinate descent
//!   group lasso solver with a KKT optimality certificate.
//! - [`baselines`]: Lasso, least squares, ridge and neighborhood-selection
//!   reference estimators.
//! - [`estimators`]: a name-keyed registry of edge scoring strategies.
//! - [`evaluation`]: blocked cross-validation, Monte-Carlo recovery trials
//!   and ROC curves.
//!
//! Node indices are 0-based in the API. Edges are `(i, j)` pairs meaning
//! "node `j` influences node `i`", i.e. coefficient `a_{i,j}(r)`. File formats
//! and printed reports use 1-based indices and the `j -> i` notation.

// `!(x > 0.0)` is used deliberately so NaN is rejected too
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod covariance;
pub mod error;
pub mod estimators;
pub mod evaluation;
pub mod fcs;
pub mod io;
pub mod model;
pub mod seed;
pub mod solver;

pub use error::{Error, Result};
pub use nalgebra;

/// Which group-lasso penalty is applied to a node's regression.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize, serde::Deserialize,
)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// Every coefficient group, including the self-connection, is penalized.
    Sg,
    /// The self-connection group of the target node is left unpenalized.
    Scsg,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Sg => "sg",
            Variant::Scsg => "scsg",
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sg" => Ok(Variant::Sg),
            "scsg" => Ok(Variant::Scsg),
            other => Err(Error::InvalidArgument(format!("unknown variant `{other}`"))),
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}
