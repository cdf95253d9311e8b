//! Per-node regression designs and the group lasso solver.
//!
//! For target node `i` the estimator minimizes
//! `(1/n) ||y_i - X a_i||^2 + lambda * sum_j ||a_{i,j}||_2`,
//! where the sum runs over every node (SG) or over `j != i` (SCSG).

pub mod design;
pub mod group_lasso;

pub use design::{build_design, build_design_independent, design_column, RegressionDesign};
pub use group_lasso::{Group, GroupLassoSolution, GroupLayout, LambdaGrid, Problem, SolverConfig};

use crate::error::Result;
use crate::Variant;

pub fn lambda_max(design: &RegressionDesign, variant: Variant) -> Result<f64> {
    Problem::new(design, GroupLayout::for_variant(design, variant)).lambda_max()
}

pub fn solve(
    design: &RegressionDesign,
    lambda: f64,
    variant: Variant,
    config: &SolverConfig,
) -> Result<GroupLassoSolution> {
    Problem::new(design, GroupLayout::for_variant(design, variant)).solve(lambda, config, None)
}

/// KKT violation of `solution` evaluated directly on the design matrix.
pub fn kkt_residual(design: &RegressionDesign, solution: &GroupLassoSolution, lambda: f64) -> f64 {
    group_lasso::design_kkt_residual(design, &solution.layout, &solution.coeffs, lambda)
}

pub fn lambda_path(
    design: &RegressionDesign,
    variant: Variant,
    grid: &LambdaGrid,
    config: &SolverConfig,
) -> Result<Vec<GroupLassoSolution>> {
    Problem::new(design, GroupLayout::for_variant(design, variant)).path(grid, config)
}
