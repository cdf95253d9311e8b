//! False connection scores.
//!
//! For a candidate false edge `j -> i` (with `j` not a parent of `i`) the score
//! is `|| sum_{k in S_i} Psi_{j,k}^T a_{i,k} / ||a_{i,k}|| ||_2`, where
//! `Psi_{j,S_i}` is the population least-squares predictor of `X_j` from the
//! parent blocks. The self-connected variant drops the `k = i` term. Scores
//! below one mean the corresponding estimator recovers the true parents of
//! `i` as the sample size grows; a score above one forces a false edge.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::covariance::{self, CovarianceMethod, PredictorMatrix, StationaryCovariance};
use crate::error::{Error, Result};
use crate::model::{MarModel, SparsityPattern};
use crate::Variant;

/// Scores for the candidate edge "`j` influences `i`".
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EdgeScore {
    pub i: usize,
    pub j: usize,
    /// Penalize-everything score.
    pub psi: f64,
    /// Self-connected score (self term omitted).
    pub psi_sc: f64,
}

impl EdgeScore {
    pub fn get(&self, variant: Variant) -> f64 {
        match variant {
            Variant::Sg => self.psi,
            Variant::Scsg => self.psi_sc,
        }
    }
}

/// Sum of `Psi_{j,k}^T a_k / ||a_k||` over the conditioning set, skipping
/// `exclude`. `directions[idx]` is the true coefficient block of the
/// `idx`-th conditioning node.
pub fn score_from_blocks(
    psi: &PredictorMatrix,
    directions: &[DVector<f64>],
    exclude: Option<usize>,
    target: usize,
) -> Result<f64> {
    let p = psi.stacked.ncols();
    let mut acc = DVector::zeros(p);
    for (idx, &k) in psi.conditioning_set.iter().enumerate() {
        let a = &directions[idx];
        let norm = a.norm();
        if norm == 0.0 {
            return Err(Error::ZeroConnection {
                from: k,
                to: target,
            });
        }
        if Some(k) == exclude {
            continue;
        }
        acc += psi.block(idx).tr_mul(a) / norm;
    }
    Ok(acc.norm())
}

/// Both scores for the candidate false edge `j -> i`.
pub fn edge_scores(
    model: &MarModel,
    gamma: &StationaryCovariance,
    i: usize,
    j: usize,
) -> Result<EdgeScore> {
    let n = model.n_nodes();
    if i >= n || j >= n {
        return Err(Error::InvalidArgument(format!(
            "edge ({i}, {j}) out of range"
        )));
    }
    let parents = model.parents(i);
    if parents.contains(&j) {
        return Err(Error::InvalidArgument(format!(
            "{} -> {} is an active edge, not a false-connection candidate",
            j + 1,
            i + 1
        )));
    }
    if parents.is_empty() {
        return Ok(EdgeScore {
            i,
            j,
            psi: 0.0,
            psi_sc: 0.0,
        });
    }
    let psi = covariance::predictor_matrix(gamma, &parents, j)?;
    let directions: Vec<DVector<f64>> = parents.iter().map(|&k| model.block(i, k)).collect();
    Ok(EdgeScore {
        i,
        j,
        psi: score_from_blocks(&psi, &directions, None, i)?,
        psi_sc: score_from_blocks(&psi, &directions, Some(i), i)?,
    })
}

pub fn fcs_edge(
    model: &MarModel,
    gamma: &StationaryCovariance,
    i: usize,
    j: usize,
    variant: Variant,
) -> Result<f64> {
    Ok(edge_scores(model, gamma, i, j)?.get(variant))
}

#[derive(Debug, Clone, PartialEq)]
pub struct FcsReport {
    /// Every `(i, j)` with `i != j` outside the active set, sorted.
    pub edges: Vec<EdgeScore>,
    pub psi_max: f64,
    pub psi_sc_max: f64,
    pub normalized: bool,
}

impl FcsReport {
    pub fn get(&self, i: usize, j: usize) -> Option<&EdgeScore> {
        self.edges.iter().find(|e| e.i == i && e.j == j)
    }

    pub fn max(&self, variant: Variant) -> f64 {
        match variant {
            Variant::Sg => self.psi_max,
            Variant::Scsg => self.psi_sc_max,
        }
    }

    /// Asymptotic recoverability: every candidate score below one.
    pub fn recoverable(&self, variant: Variant) -> bool {
        self.max(variant) < 1.0
    }
}

/// Scores for every cross-node candidate false edge, optionally after
/// normalizing every node to unit power.
pub fn fcs_report(model: &MarModel, normalize: bool) -> Result<FcsReport> {
    fcs_report_with(model, normalize, CovarianceMethod::auto(model))
}

pub fn fcs_report_with(
    model: &MarModel,
    normalize: bool,
    method: CovarianceMethod,
) -> Result<FcsReport> {
    let mut gamma = covariance::stationary_covariance(model, method)?;
    let normalized_model;
    let model = if normalize {
        normalized_model = covariance::normalize_model(model, &gamma)?.0;
        gamma = covariance::stationary_covariance(&normalized_model, method)?;
        &normalized_model
    } else {
        model
    };
    let support = model.support();
    let n = model.n_nodes();
    let candidates: Vec<(usize, usize)> = (0..n)
        .flat_map(|i| (0..n).map(move |j| (i, j)))
        .filter(|&(i, j)| i != j && !support.contains(i, j))
        .collect();
    let edges = candidates
        .par_iter()
        .map(|&(i, j)| edge_scores(model, &gamma, i, j))
        .collect::<Result<Vec<_>>>()?;
    let psi_max = edges.iter().map(|e| e.psi).fold(0.0, f64::max);
    let psi_sc_max = edges.iter().map(|e| e.psi_sc).fold(0.0, f64::max);
    Ok(FcsReport {
        edges,
        psi_max,
        psi_sc_max,
        normalized: normalize,
    })
}

/// Finite-sample counterparts of the recovery assumptions.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct AssumptionAudit {
    /// `max_i Gamma(0)_{ii}`.
    pub max_signal_power: f64,
    /// `min ||a_{i,j}||_2` over the active set.
    pub min_connection_strength: f64,
    /// `max_i ||R_{S_i,S_i}^{-1}||_2`.
    pub max_inverse_parent_cov_norm: f64,
    /// `max_i ||R_{S_i,S_i^C}||_2` (zero when every node is a parent).
    pub max_cross_cov_norm: f64,
    pub psi_max: f64,
    pub psi_sc_max: f64,
    /// Some active edge has a zero coefficient block.
    pub weak_connection: bool,
    /// `psi_max >= 1`: the penalize-everything estimator cannot recover the
    /// structure.
    pub false_connection_violation: bool,
    /// `psi_sc_max >= 1`.
    pub false_connection_violation_sc: bool,
}

fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.clone().singular_values().max()
}

/// Audit against `pattern` (defaults to the model's support). Scores always
/// use the model's own support.
pub fn audit_assumptions(
    model: &MarModel,
    gamma: &StationaryCovariance,
    pattern: Option<&SparsityPattern>,
) -> Result<AssumptionAudit> {
    let support = model.support();
    let pattern = pattern.unwrap_or(&support);
    if pattern.is_empty() {
        return Err(Error::InvalidArgument(
            "audit needs a non-empty active set".into(),
        ));
    }
    let n = model.n_nodes();
    let max_signal_power = gamma.node_powers().into_iter().fold(0.0, f64::max);
    let min_connection_strength = pattern
        .edges()
        .iter()
        .map(|&(i, j)| model.block(i, j).norm())
        .fold(f64::INFINITY, f64::min);

    let mut max_inv = 0.0_f64;
    let mut max_cross = 0.0_f64;
    for i in 0..n {
        let parents = pattern.parents(i);
        if parents.is_empty() {
            continue;
        }
        let r_ss = covariance::sub_cov(gamma, &parents, &parents)?;
        let min_eig = covariance::min_eigenvalue(&r_ss);
        if !(min_eig > 1e-12 * r_ss.amax().max(f64::MIN_POSITIVE)) {
            return Err(Error::Singular {
                context: format!("R_{{S_{},S_{}}}", i + 1, i + 1),
                min_eigenvalue: min_eig,
            });
        }
        max_inv = max_inv.max(1.0 / min_eig);
        let others: Vec<usize> = (0..n).filter(|k| !parents.contains(k)).collect();
        if !others.is_empty() {
            max_cross = max_cross.max(spectral_norm(&covariance::sub_cov(
                gamma, &parents, &others,
            )?));
        }
    }

    let report = fcs_edges_for(model, gamma)?;
    let psi_max = report.iter().map(|e| e.psi).fold(0.0, f64::max);
    let psi_sc_max = report.iter().map(|e| e.psi_sc).fold(0.0, f64::max);
    Ok(AssumptionAudit {
        max_signal_power,
        min_connection_strength,
        max_inverse_parent_cov_norm: max_inv,
        max_cross_cov_norm: max_cross,
        psi_max,
        psi_sc_max,
        weak_connection: !(min_connection_strength > 0.0),
        false_connection_violation: psi_max >= 1.0,
        false_connection_violation_sc: psi_sc_max >= 1.0,
    })
}

fn fcs_edges_for(model: &MarModel, gamma: &StationaryCovariance) -> Result<Vec<EdgeScore>> {
    let support = model.support();
    let n = model.n_nodes();
    let mut out = Vec::new();
    for i in 0..n {
        for j in 0..n {
            if i != j && !support.contains(i, j) {
                out.push(edge_scores(model, gamma, i, j)?);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::covariance::stationary_covariance;
    use crate::model::{parallel_network, winterhalder_network};

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() <= 0.01 + 1e-12
    }

    #[test]
    fn parallel_table_entries() {
        let m = parallel_network();
        let g = stationary_covariance(&m, CovarianceMethod::Kronecker).unwrap();
        // (i, j) = candidate "j -> i", 0-based
        let e = edge_scores(&m, &g, 0, 1).unwrap();
        assert!(close(e.psi, 1.06) && close(e.psi_sc, 1.06), "{e:?}");
        let e = edge_scores(&m, &g, 1, 0).unwrap();
        assert!(close(e.psi, 1.41), "{e:?}");
        assert_eq!(e.psi_sc, 0.0);
        for i in 2..6 {
            let e = edge_scores(&m, &g, i, 0).unwrap();
            assert!(close(e.psi, 1.93) && close(e.psi_sc, 0.71), "{e:?}");
        }
    }

    #[test]
    fn self_only_parent_gives_zero_sc_score() {
        let m = parallel_network();
        let g = stationary_covariance(&m, CovarianceMethod::Kronecker).unwrap();
        for j in [0, 2, 3, 4, 5] {
            assert_eq!(fcs_edge(&m, &g, 6, j, Variant::Scsg).unwrap(), 0.0);
            assert_eq!(fcs_edge(&m, &g, 1, j, Variant::Scsg).unwrap(), 0.0);
        }
    }

    #[test]
    fn active_edge_is_not_a_candidate() {
        let m = parallel_network();
        let g = stationary_covariance(&m, CovarianceMethod::Kronecker).unwrap();
        assert!(edge_scores(&m, &g, 0, 2).is_err());
    }

    #[test]
    fn no_parents_scores_zero() {
        let m = MarModel::from_triples(2, 1, &[(1, 1, 1, 0.5)], DMatrix::identity(2, 2)).unwrap();
        let g = stationary_covariance(&m, CovarianceMethod::Kronecker).unwrap();
        let e = edge_scores(&m, &g, 0, 1).unwrap();
        assert_eq!((e.psi, e.psi_sc), (0.0, 0.0));
    }

    #[test]
    fn zero_direction_is_an_error() {
        let mut psi = predictor_fixture();
        psi.stacked = DMatrix::identity(2, 2);
        let err = score_from_blocks(&psi, &[DVector::zeros(2)], None, 2).unwrap_err();
        assert!(matches!(err, Error::ZeroConnection { from: 0, to: 2 }));
    }

    fn predictor_fixture() -> PredictorMatrix {
        let m = MarModel::from_triples(2, 2, &[(0, 0, 1, 0.5)], DMatrix::identity(2, 2)).unwrap();
        let g = stationary_covariance(&m, CovarianceMethod::Kronecker).unwrap();
        covariance::predictor_matrix(&g, &[0], 1).unwrap()
    }

    #[test]
    fn zero_predictor_gives_zero_score() {
        let psi = predictor_fixture();
        assert!(psi.stacked.amax() < 1e-14);
        let s = score_from_blocks(&psi, &[DVector::from_vec(vec![0.5, 0.0])], None, 0).unwrap();
        assert!(s < 1e-14);
    }

    #[test]
    fn report_maxima() {
        let r = fcs_report(&winterhalder_network(), false).unwrap();
        assert!(close(r.psi_max, 0.46));
        assert!(close(r.psi_sc_max, 0.29));
        assert!(r.recoverable(Variant::Sg) && r.recoverable(Variant::Scsg));
        let recomputed = r.edges.iter().map(|e| e.psi).fold(0.0, f64::max);
        assert_eq!(recomputed, r.psi_max);
        assert!(r
            .edges
            .iter()
            .all(|e| e.psi >= 0.0 && e.psi_sc >= 0.0 && e.i != e.j));

        let p = fcs_report(&parallel_network(), false).unwrap();
        assert!(!p.recoverable(Variant::Sg));
        assert!(close(p.psi_max, 1.93) && close(p.psi_sc_max, 1.06));
    }

    #[test]
    fn audit_zero_coupling() {
        let m = MarModel::zeros(3, 2, DMatrix::identity(3, 3)).unwrap();
        let g = stationary_covariance(&m, CovarianceMethod::Kronecker).unwrap();
        let selfs = SparsityPattern::new(3, (0..3).map(|i| (i, i))).unwrap();
        let a = audit_assumptions(&m, &g, Some(&selfs)).unwrap();
        assert!((a.max_inverse_parent_cov_norm - 1.0).abs() < 1e-12);
        assert!(a.max_cross_cov_norm.abs() < 1e-12);
        assert!(a.weak_connection);
        assert!(!a.false_connection_violation);
    }

    #[test]
    fn audit_flags() {
        let p = parallel_network();
        let g = stationary_covariance(&p, CovarianceMethod::Kronecker).unwrap();
        let a = audit_assumptions(&p, &g, None).unwrap();
        assert!(a.false_connection_violation);
        assert!((a.min_connection_strength - 0.1).abs() < 1e-12);

        let w = winterhalder_network();
        let g = stationary_covariance(&w, CovarianceMethod::Kronecker).unwrap();
        let a = audit_assumptions(&w, &g, None).unwrap();
        assert!(
            !a.false_connection_violation && !a.false_connection_violation_sc && !a.weak_connection
        );
        assert!(a.max_signal_power > 1.0);
        assert!(a.max_inverse_parent_cov_norm.is_finite() && a.max_cross_cov_norm > 0.0);
    }
}
