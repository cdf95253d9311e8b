//! Reference estimators: plain Lasso, least squares, ridge regression with
//! normalized test statistics, and neighborhood selection on contemporaneous
//! samples.
//!
//! Every estimator yields a per-edge detection statistic where larger means
//! more confident; ROC curves come from sweeping a threshold over it.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};

use crate::covariance::spd_solve;
use crate::error::{Error, Result};
use crate::model::TimeSeries;
use crate::solver::{
    GroupLassoSolution, GroupLayout, LambdaGrid, Problem, RegressionDesign, SolverConfig,
};

/// How per-lag statistics of one edge are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LagAggregation {
    #[default]
    L2,
    Max,
}

impl LagAggregation {
    fn apply(self, values: impl Iterator<Item = f64>) -> f64 {
        match self {
            LagAggregation::L2 => values.map(|v| v * v).sum::<f64>().sqrt(),
            LagAggregation::Max => values.map(f64::abs).fold(0.0, f64::max),
        }
    }
}

/// Detection statistics for one target node, indexed by source node.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeScores {
    pub target: usize,
    pub coeffs: DVector<f64>,
    pub stats: Vec<f64>,
}

/// Network-wide detection statistics over candidate edges `(i, j)`, `i != j`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredEdgeSet {
    pub estimator: String,
    pub n_nodes: usize,
    pub scores: BTreeMap<(usize, usize), f64>,
    /// Free-form parameters (penalties, grid settings) recorded for reports.
    pub params: Vec<(String, f64)>,
}

impl ScoredEdgeSet {
    /// Assemble from per-node scores, dropping self-edges.
    pub fn from_nodes(
        estimator: impl Into<String>,
        n_nodes: usize,
        nodes: &[NodeScores],
    ) -> Result<Self> {
        let mut scores = BTreeMap::new();
        for node in nodes {
            for (j, &s) in node.stats.iter().enumerate() {
                if j == node.target {
                    continue;
                }
                if !s.is_finite() {
                    return Err(Error::Numerical(format!(
                        "non-finite statistic for edge {} -> {}",
                        j + 1,
                        node.target + 1
                    )));
                }
                scores.insert((node.target, j), s);
            }
        }
        Ok(Self {
            estimator: estimator.into(),
            n_nodes,
            scores,
            params: Vec::new(),
        })
    }

    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        self.scores.get(&(i, j)).copied()
    }

    /// Edges whose statistic is strictly positive.
    pub fn detected(&self) -> Vec<(usize, usize)> {
        self.scores
            .iter()
            .filter(|(_, &s)| s > 0.0)
            .map(|(&e, _)| e)
            .collect()
    }

    pub fn with_param(mut self, name: &str, value: f64) -> Self {
        self.params.push((name.to_string(), value));
        self
    }
}

fn block_stats(
    values: &DVector<f64>,
    n_nodes: usize,
    order: usize,
    agg: LagAggregation,
) -> Vec<f64> {
    (0..n_nodes)
        .map(|j| agg.apply(values.rows(j * order, order).iter().copied()))
        .collect()
}

/// Group lasso with singleton groups. Statistic: `||a_{i,j}||_2` at `lambda`.
pub fn lasso_fit(
    design: &RegressionDesign,
    lambda: f64,
    config: &SolverConfig,
) -> Result<(GroupLassoSolution, NodeScores)> {
    let layout = GroupLayout::singletons(design.n_nodes() * design.order(), design.order());
    let sol = Problem::new(design, layout).solve(lambda, config, None)?;
    let stats = block_stats(
        &sol.coeffs,
        design.n_nodes(),
        design.order(),
        LagAggregation::L2,
    );
    let scores = NodeScores {
        target: design.target(),
        coeffs: sol.coeffs.clone(),
        stats,
    };
    Ok((sol, scores))
}

/// Largest grid penalty at which each source node's group (or, for singleton
/// layouts, any of its coefficients) is nonzero; zero if it never enters.
pub fn entry_lambdas(
    problem: &Problem,
    grid: &LambdaGrid,
    config: &SolverConfig,
    n_nodes: usize,
) -> Result<Vec<f64>> {
    let path = problem.path(grid, config)?;
    let mut entry = vec![0.0; n_nodes];
    for sol in &path {
        for node in sol.active_nodes() {
            if entry[node] == 0.0 {
                entry[node] = sol.lambda;
            }
        }
    }
    Ok(entry)
}

fn ols_core(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    ridge: f64,
) -> Result<(DVector<f64>, DMatrix<f64>, f64)> {
    let n = x.nrows();
    let xtx = x.tr_mul(x);
    let mut m = xtx.clone();
    for k in 0..m.nrows() {
        m[(k, k)] += ridge * n as f64;
    }
    let inv = spd_solve(&m, &DMatrix::identity(m.nrows(), m.nrows()), "X^T X")?;
    let coef = &inv * x.tr_mul(y);
    let rss = (y - x * &coef).norm_squared();
    // effective degrees of freedom: trace of the hat matrix
    let df = (&inv * &xtx).trace();
    let dof = n as f64 - df;
    if dof <= 0.0 {
        return Err(Error::TooShort(format!(
            "{n} rows leave no residual degrees of freedom"
        )));
    }
    let sigma2 = rss / dof;
    let cov = if ridge == 0.0 {
        &inv * sigma2
    } else {
        &inv * &xtx * &inv * sigma2
    };
    Ok((coef, cov, sigma2))
}

fn t_stats(coef: &DVector<f64>, cov: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_fn(coef.len(), |k, _| {
        let se = cov[(k, k)].max(0.0).sqrt();
        if se > 0.0 {
            coef[k].abs() / se
        } else {
            0.0
        }
    })
}

/// Ordinary least squares with per-lag `|a| / SE` statistics.
pub fn least_squares_fit(design: &RegressionDesign, agg: LagAggregation) -> Result<NodeScores> {
    let cols = design.x().ncols();
    if design.n_rows() <= cols {
        return Err(Error::TooShort(format!(
            "least squares needs more than {cols} rows, got {}",
            design.n_rows()
        )));
    }
    let (coef, cov, _) = ols_core(design.x(), design.y(), 0.0)?;
    let stats = block_stats(&t_stats(&coef, &cov), design.n_nodes(), design.order(), agg);
    Ok(NodeScores {
        target: design.target(),
        coeffs: coef,
        stats,
    })
}

/// Ridge regression `(X^T X + rho n I)^{-1} X^T y` with sandwich-covariance
/// statistics.
pub fn ridge_fit(
    design: &RegressionDesign,
    ridge_penalty: f64,
    agg: LagAggregation,
) -> Result<NodeScores> {
    if !(ridge_penalty > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "ridge penalty must be positive, got {ridge_penalty}"
        )));
    }
    let (coef, cov, _) = ols_core(design.x(), design.y(), ridge_penalty)?;
    let stats = block_stats(&t_stats(&coef, &cov), design.n_nodes(), design.order(), agg);
    Ok(NodeScores {
        target: design.target(),
        coeffs: coef,
        stats,
    })
}

/// Regress `x_i(t)` on `{x_j(t)}_{j != i}`. Returns the design (order 1,
/// one column per other node) and the node of each column.
pub fn contemporaneous_design(
    series: &TimeSeries,
    target: usize,
) -> Result<(RegressionDesign, Vec<usize>)> {
    let n = series.n_nodes();
    if target >= n {
        return Err(Error::InvalidArgument(format!(
            "target {target} out of range"
        )));
    }
    if series.n_samples() < 2 {
        return Err(Error::TooShort(
            "neighborhood selection needs at least 2 samples".into(),
        ));
    }
    let others: Vec<usize> = (0..n).filter(|&j| j != target).collect();
    let x = DMatrix::from_fn(series.n_samples(), others.len().max(1), |t, c| {
        others.get(c).map_or(0.0, |&j| series.get(t, j))
    });
    let y = DVector::from_fn(series.n_samples(), |t, _| series.get(t, target));
    Ok((RegressionDesign::new(0, 1, x, y)?, others))
}

fn mb_combine(n: usize, per_node: Vec<Vec<(usize, f64)>>, name: &str) -> ScoredEdgeSet {
    let mut raw = vec![vec![0.0; n]; n];
    for (i, stats) in per_node.into_iter().enumerate() {
        for (j, s) in stats {
            raw[i][j] = s;
        }
    }
    // OR rule: an undirected edge counts if either regression picks it
    let scores = (0..n)
        .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
        .map(|(i, j)| ((i, j), raw[i][j].max(raw[j][i])))
        .collect();
    ScoredEdgeSet {
        estimator: name.into(),
        n_nodes: n,
        scores,
        params: Vec::new(),
    }
}

/// Neighborhood selection at a single penalty; statistic
/// `max(|b_{i<-j}|, |b_{j<-i}|)`, scored identically in both directions.
pub fn mb_fit(series: &TimeSeries, lambda: f64, config: &SolverConfig) -> Result<ScoredEdgeSet> {
    let n = series.n_nodes();
    let mut per_node = Vec::with_capacity(n);
    for i in 0..n {
        let (design, others) = contemporaneous_design(series, i)?;
        let layout = GroupLayout::singletons(design.x().ncols(), 1);
        let sol = Problem::new(&design, layout).solve(lambda, config, None)?;
        per_node.push(
            others
                .iter()
                .enumerate()
                .map(|(c, &j)| (j, sol.coeffs[c].abs()))
                .collect(),
        );
    }
    Ok(mb_combine(n, per_node, "mb").with_param("lambda", lambda))
}

/// Neighborhood selection over a penalty path; statistic is the largest
/// penalty at which the pair enters either regression.
pub fn mb_path_scores(
    series: &TimeSeries,
    grid: &LambdaGrid,
    config: &SolverConfig,
) -> Result<ScoredEdgeSet> {
    let n = series.n_nodes();
    let mut per_node = Vec::with_capacity(n);
    for i in 0..n {
        let (design, others) = contemporaneous_design(series, i)?;
        let layout = GroupLayout::singletons(design.x().ncols(), 1);
        let entry = entry_lambdas(&Problem::new(&design, layout), grid, config, others.len())?;
        per_node.push(
            others
                .iter()
                .enumerate()
                .map(|(c, &j)| (j, entry[c]))
                .collect(),
        );
    }
    Ok(mb_combine(n, per_node, "mb"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{simulate, winterhalder_network, Init, MarModel};
    use crate::solver::{build_design, solve};
    use crate::Variant;

    #[test]
    fn lasso_above_max_is_empty() {
        let s = simulate(&winterhalder_network(), 300, 1, Init::Stationary).unwrap();
        let d = build_design(&s, 0, 5).unwrap();
        let layout = GroupLayout::singletons(20, 5);
        let lmax = Problem::new(&d, layout).lambda_max().unwrap();
        let (sol, scores) = lasso_fit(&d, lmax * 1.000001, &SolverConfig::default()).unwrap();
        assert!(sol.coeffs.iter().all(|&v| v == 0.0));
        assert!(scores.stats.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn lasso_equals_sg_for_order_one() {
        let m = MarModel::from_triples(
            3,
            1,
            &[
                (0, 0, 1, 0.5),
                (1, 0, 1, 0.4),
                (2, 1, 1, -0.3),
                (2, 2, 1, 0.2),
            ],
            DMatrix::identity(3, 3),
        )
        .unwrap();
        let s = simulate(&m, 200, 3, Init::Stationary).unwrap();
        let d = build_design(&s, 2, 1).unwrap();
        let cfg = SolverConfig::default();
        for lambda in [0.01, 0.05, 0.2] {
            let (lasso, _) = lasso_fit(&d, lambda, &cfg).unwrap();
            let sg = solve(&d, lambda, Variant::Sg, &cfg).unwrap();
            assert_eq!(lasso.coeffs, sg.coeffs);
        }
    }

    #[test]
    fn least_squares_recovers_noiseless_truth() {
        let m = winterhalder_network();
        let s = simulate(&m, 400, 8, Init::Stationary).unwrap();
        // replace the realization by its noiseless one-step predictions,
        // so y = X a holds exactly
        let d = build_design(&s, 2, 5).unwrap();
        let mut truth = DVector::zeros(20);
        for j in 0..4 {
            for r in 1..=5 {
                truth[j * 5 + r - 1] = m.coeff(2, j, r);
            }
        }
        let exact = RegressionDesign::new(2, 5, d.x().clone(), d.x() * &truth).unwrap();
        let x = exact.x().clone();
        let y =
            exact.y() + DVector::from_fn(exact.n_rows(), |k, _| 1e-9 * ((k as f64) * 1.3).sin());
        let fit = least_squares_fit(
            &RegressionDesign::new(2, 5, x, y).unwrap(),
            LagAggregation::L2,
        )
        .unwrap();
        assert!((fit.coeffs - truth).amax() < 1e-6);
    }

    #[test]
    fn least_squares_needs_rows() {
        let s = simulate(&winterhalder_network(), 20, 1, Init::Stationary).unwrap();
        let d = build_design(&s, 0, 5).unwrap();
        assert!(matches!(
            least_squares_fit(&d, LagAggregation::L2),
            Err(Error::TooShort(_))
        ));
    }

    #[test]
    fn ridge_limits() {
        let s = simulate(&winterhalder_network(), 500, 2, Init::Stationary).unwrap();
        let d = build_design(&s, 1, 5).unwrap();
        let ls = least_squares_fit(&d, LagAggregation::L2).unwrap();
        let tiny = ridge_fit(&d, 1e-12, LagAggregation::L2).unwrap();
        assert!((&ls.coeffs - &tiny.coeffs).amax() < 1e-6);
        let huge = ridge_fit(&d, 1e8, LagAggregation::L2).unwrap();
        assert!(huge.coeffs.amax() < 1e-6);
        assert!(ridge_fit(&d, 0.0, LagAggregation::L2).is_err());
    }

    #[test]
    fn max_aggregation() {
        assert_eq!(LagAggregation::Max.apply([1.0, -3.0, 2.0].into_iter()), 3.0);
        assert_eq!(LagAggregation::L2.apply([3.0, 4.0].into_iter()), 5.0);
    }

    #[test]
    fn mb_independent_and_duplicated_nodes() {
        let m = MarModel::zeros(3, 1, DMatrix::identity(3, 3)).unwrap();
        let s = simulate(&m, 2000, 4, Init::Zero).unwrap();
        let cfg = SolverConfig::default();
        assert!(mb_fit(&s, 0.2, &cfg).unwrap().detected().is_empty());

        // node 2 duplicates node 0
        let mut v = s.values().clone();
        let c0 = v.column(0).into_owned();
        v.set_column(2, &c0);
        let dup = TimeSeries::new(v).unwrap();
        for lambda in [1e-3, 1e-2, 0.1] {
            let r = mb_fit(&dup, lambda, &cfg).unwrap();
            assert!(r.get(0, 2).unwrap() > 0.0 && r.get(2, 0).unwrap() > 0.0);
            assert_eq!(r.get(0, 2), r.get(2, 0));
        }
    }
}
