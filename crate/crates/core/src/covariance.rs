//! Stationary covariance of a MAR process and the population regression
//! quantities built from it.
//!
//! The stacked state `z(t) = [x(t-1); x(t-2); ...; x(t-p)]` has covariance
//! `Gamma` solving the discrete Lyapunov equation `Gamma = A Gamma A^T + S`,
//! where `A` is the companion matrix and `S` embeds the noise covariance in
//! its top-left block. Block `(u, v)` of `Gamma` is `Gamma(v - u)` with
//! `Gamma(tau) = E[x(t) x(t - tau)^T]`.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::model::{self, MarModel};
use crate::solver::design::design_column;

/// Largest `N * p` solved through the dense Kronecker system by
/// [`CovarianceMethod::auto`].
pub const KRONECKER_MAX_DIM: usize = 40;

const FIXED_POINT_TOL: f64 = 1e-13;
const FIXED_POINT_MAX_ITER: usize = 100_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CovarianceMethod {
    /// Solve `(I - A kron A) vec(Gamma) = vec(S)` directly.
    Kronecker,
    /// Iterate `Gamma <- A Gamma A^T + S` to convergence.
    FixedPoint,
    /// Squared-and-summed form of the same series (Smith doubling); converges
    /// in `O(log)` steps and scales to larger `N * p`.
    Doubling,
}

impl CovarianceMethod {
    pub fn auto(model: &MarModel) -> Self {
        if model.n_nodes() * model.order() <= KRONECKER_MAX_DIM {
            CovarianceMethod::Kronecker
        } else {
            CovarianceMethod::Doubling
        }
    }
}

impl std::str::FromStr for CovarianceMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "kronecker" => Ok(Self::Kronecker),
            "fixed_point" | "fixed-point" => Ok(Self::FixedPoint),
            "doubling" => Ok(Self::Doubling),
            other => Err(Error::InvalidArgument(format!(
                "unknown covariance method `{other}`"
            ))),
        }
    }
}

/// The `pN x pN` block-Toeplitz stationary covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct StationaryCovariance {
    block_toeplitz: DMatrix<f64>,
    n_nodes: usize,
    order: usize,
}

impl StationaryCovariance {
    pub fn block_toeplitz(&self) -> &DMatrix<f64> {
        &self.block_toeplitz
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn order(&self) -> usize {
        self.order
    }

    /// `Gamma(tau) = E[x(t) x(t - tau)^T]` for `tau < order`.
    pub fn lag_cov(&self, tau: usize) -> DMatrix<f64> {
        let n = self.n_nodes;
        self.block_toeplitz.view((0, tau * n), (n, n)).into_owned()
    }

    pub fn lag_covs(&self) -> Vec<DMatrix<f64>> {
        (0..self.order).map(|tau| self.lag_cov(tau)).collect()
    }

    /// Node powers `sigma_i^2 = Gamma(0)_{ii}`.
    pub fn node_powers(&self) -> Vec<f64> {
        (0..self.n_nodes)
            .map(|i| self.block_toeplitz[(i, i)])
            .collect()
    }

    /// Index into `Gamma` of `x_node(t - lag)`, 1-based lag.
    fn index(&self, node: usize, lag: usize) -> usize {
        (lag - 1) * self.n_nodes + node
    }
}

fn embedded_noise(model: &MarModel) -> DMatrix<f64> {
    let n = model.n_nodes();
    let dim = n * model.order();
    let mut s = DMatrix::zeros(dim, dim);
    s.view_mut((0, 0), (n, n)).copy_from(model.noise_cov());
    s
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let t = m.transpose();
    *m += t;
    *m *= 0.5;
}

pub fn stationary_covariance(
    model: &MarModel,
    method: CovarianceMethod,
) -> Result<StationaryCovariance> {
    let stability = model::is_stable(model, 0.0)?;
    if !stability.stable {
        return Err(Error::Unstable {
            radius: stability.spectral_radius,
        });
    }
    let a = model::companion(model).matrix().clone();
    let s = embedded_noise(model);
    let dim = a.nrows();

    let mut gamma = match method {
        CovarianceMethod::Kronecker => {
            let mut system = a.kronecker(&a);
            system.neg_mut();
            for k in 0..dim * dim {
                system[(k, k)] += 1.0;
            }
            let rhs = nalgebra::DVector::from_column_slice(s.as_slice());
            let vec_gamma = system.lu().solve(&rhs).ok_or_else(|| {
                Error::Numerical(format!(
                    "I - A kron A is singular (spectral radius {:.6})",
                    stability.spectral_radius
                ))
            })?;
            DMatrix::from_column_slice(dim, dim, vec_gamma.as_slice())
        }
        CovarianceMethod::FixedPoint => {
            let mut g = s.clone();
            let mut converged = false;
            for _ in 0..FIXED_POINT_MAX_ITER {
                let next = &a * &g * a.transpose() + &s;
                let change = (&next - &g).norm();
                g = next;
                if change <= FIXED_POINT_TOL * g.norm().max(1.0) {
                    converged = true;
                    break;
                }
            }
            if !converged {
                return Err(Error::Numerical(format!(
                    "fixed-point iteration did not converge (spectral radius {:.6})",
                    stability.spectral_radius
                )));
            }
            g
        }
        CovarianceMethod::Doubling => {
            let mut g = s.clone();
            let mut ak = a.clone();
            let mut converged = false;
            for _ in 0..64 {
                let inc = &ak * &g * ak.transpose();
                g += &inc;
                ak = &ak * &ak;
                if inc.norm() <= FIXED_POINT_TOL * g.norm().max(1.0) {
                    converged = true;
                    break;
                }
            }
            if !converged {
                return Err(Error::Numerical(format!(
                    "doubling iteration did not converge (spectral radius {:.6})",
                    stability.spectral_radius
                )));
            }
            g
        }
    };
    symmetrize(&mut gamma);
    if gamma.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical(
            "stationary covariance is not finite".into(),
        ));
    }
    Ok(StationaryCovariance {
        block_toeplitz: gamma,
        n_nodes: model.n_nodes(),
        order: model.order(),
    })
}

/// `||Gamma - A Gamma A^T - S||_F / max(1, ||Gamma||_F)`.
pub fn lyapunov_residual(model: &MarModel, gamma: &StationaryCovariance) -> f64 {
    let a = model::companion(model).matrix().clone();
    let g = gamma.block_toeplitz();
    let r = g - &a * g * a.transpose() - embedded_noise(model);
    r.norm() / g.norm().max(1.0)
}

/// `R_{rows,cols} = E[X_rows^T X_cols]` with the design's column layout:
/// node-major blocks, lags `1..p` within each block.
pub fn sub_cov(
    gamma: &StationaryCovariance,
    rows: &[usize],
    cols: &[usize],
) -> Result<DMatrix<f64>> {
    if rows.is_empty() || cols.is_empty() {
        return Err(Error::InvalidArgument(
            "sub_cov needs non-empty node sets".into(),
        ));
    }
    let n = gamma.n_nodes;
    if let Some(&bad) = rows.iter().chain(cols).find(|&&k| k >= n) {
        return Err(Error::InvalidArgument(format!(
            "node {bad} out of range for {n} nodes"
        )));
    }
    let p = gamma.order;
    let g = &gamma.block_toeplitz;
    let mut out = DMatrix::zeros(rows.len() * p, cols.len() * p);
    for (a, &k) in rows.iter().enumerate() {
        for r in 1..=p {
            let gr = gamma.index(k, r);
            for (b, &l) in cols.iter().enumerate() {
                for s in 1..=p {
                    out[(design_column(a, r, p), design_column(b, s, p))] =
                        g[(gr, gamma.index(l, s))];
                }
            }
        }
    }
    Ok(out)
}

/// Population least-squares predictor of `X_j` from the blocks `X_k`,
/// `k` in the conditioning set.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictorMatrix {
    pub target: usize,
    pub conditioning_set: Vec<usize>,
    /// `(|S| p) x p` matrix `R_{S,S}^{-1} E[X_S^T X_j]`.
    pub stacked: DMatrix<f64>,
    order: usize,
}

impl PredictorMatrix {
    /// `Psi_{j,k}` for the `idx`-th member of the conditioning set.
    pub fn block(&self, idx: usize) -> DMatrix<f64> {
        self.stacked
            .view((idx * self.order, 0), (self.order, self.order))
            .into_owned()
    }

    pub fn block_for(&self, node: usize) -> Option<DMatrix<f64>> {
        self.conditioning_set
            .iter()
            .position(|&k| k == node)
            .map(|idx| self.block(idx))
    }
}

pub(crate) fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    m.clone()
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// Solve `R x = b` for symmetric positive definite `R`.
pub(crate) fn spd_solve(r: &DMatrix<f64>, b: &DMatrix<f64>, context: &str) -> Result<DMatrix<f64>> {
    let min_eig = min_eigenvalue(r);
    let scale = r.amax().max(f64::MIN_POSITIVE);
    match r.clone().cholesky() {
        Some(chol) if min_eig > 1e-12 * scale => Ok(chol.solve(b)),
        _ => Err(Error::Singular {
            context: context.to_string(),
            min_eigenvalue: min_eig,
        }),
    }
}

pub fn predictor_matrix(
    gamma: &StationaryCovariance,
    parents: &[usize],
    j: usize,
) -> Result<PredictorMatrix> {
    if parents.contains(&j) {
        return Err(Error::InvalidArgument(format!(
            "node {j} is in its own conditioning set"
        )));
    }
    let r_ss = sub_cov(gamma, parents, parents)?;
    let r_sj = sub_cov(gamma, parents, &[j])?;
    let stacked = spd_solve(&r_ss, &r_sj, "R_{S,S}")?;
    Ok(PredictorMatrix {
        target: j,
        conditioning_set: parents.to_vec(),
        stacked,
        order: gamma.order,
    })
}

/// Diagonal similarity making every node unit-power.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizationTransform {
    pub node_powers: Vec<f64>,
}

impl NormalizationTransform {
    /// The `pN x pN` block-diagonal `D`, `D_i = sigma_i^2 I_p`, in the
    /// stacked state ordering.
    pub fn d_matrix(&self, order: usize) -> DMatrix<f64> {
        let n = self.node_powers.len();
        DMatrix::from_fn(n * order, n * order, |u, v| {
            if u == v {
                self.node_powers[u % n]
            } else {
                0.0
            }
        })
    }
}

/// `A -> D^{-1/2} A D^{1/2}`, `S -> D^{-1/2} S D^{-1/2}`.
pub fn normalize_model(
    model: &MarModel,
    gamma: &StationaryCovariance,
) -> Result<(MarModel, NormalizationTransform)> {
    if gamma.n_nodes() != model.n_nodes() || gamma.order() != model.order() {
        return Err(Error::Dimension("covariance does not match model".into()));
    }
    let powers = gamma.node_powers();
    if let Some(node) = powers.iter().position(|&p| !(p > 0.0)) {
        return Err(Error::Numerical(format!("node {node} has zero power")));
    }
    let sd: Vec<f64> = powers.iter().map(|p| p.sqrt()).collect();
    let n = model.n_nodes();
    let lags = model
        .lags()
        .iter()
        .map(|a| DMatrix::from_fn(n, n, |i, j| a[(i, j)] * sd[j] / sd[i]))
        .collect();
    let sigma = model.noise_cov();
    let mut noise = DMatrix::from_fn(n, n, |i, j| sigma[(i, j)] / (sd[i] * sd[j]));
    symmetrize(&mut noise);
    Ok((
        MarModel::new(lags, noise)?,
        NormalizationTransform {
            node_powers: powers,
        },
    ))
}
