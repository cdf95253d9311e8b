//! Edge scoring strategies behind a common trait, registered by name.
//!
//! ```
//! use smartnet::estimators::Registry;
//! let reg = Registry::with_defaults();
//! assert!(reg.get("scsg").is_some());
//! ```

use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::baselines::{
    entry_lambdas, least_squares_fit, mb_path_scores, ridge_fit, LagAggregation, NodeScores,
    ScoredEdgeSet,
};
use crate::error::{Error, Result};
use crate::model::TimeSeries;
use crate::solver::{
    build_design, GroupLayout, LambdaGrid, Problem, RegressionDesign, SolverConfig,
};
use crate::Variant;

/// Default ridge penalty `rho` in `(X^T X + rho n I)`.
pub const DEFAULT_RIDGE_PENALTY: f64 = 1e-3;

/// Grid used by path estimators: shared by all nodes, relative to the
/// largest per-node `lambda_max`.
pub fn default_path_grid() -> LambdaGrid {
    LambdaGrid::Relative {
        lo_frac: 1e-3,
        n_points: 100,
    }
}

/// Anything that turns a time series into per-edge detection statistics.
pub trait EdgeEstimator: Send + Sync {
    fn name(&self) -> &str;
    fn score(&self, series: &TimeSeries, order: usize) -> Result<ScoredEdgeSet>;
}

fn designs(series: &TimeSeries, order: usize) -> Result<Vec<RegressionDesign>> {
    (0..series.n_nodes())
        .map(|i| build_design(series, i, order))
        .collect()
}

/// Penalized path estimator; an edge is scored by the largest penalty at
/// which its group enters the model. One grid is shared by all nodes so
/// thresholding the statistic is the same as sweeping a single `lambda`.
pub struct PathEstimator {
    name: String,
    layout: fn(&RegressionDesign) -> GroupLayout,
    pub grid: LambdaGrid,
    pub config: SolverConfig,
}

impl PathEstimator {
    pub fn group(variant: Variant) -> Self {
        let layout: fn(&RegressionDesign) -> GroupLayout = match variant {
            Variant::Sg => |d| GroupLayout::for_variant(d, Variant::Sg),
            Variant::Scsg => |d| GroupLayout::for_variant(d, Variant::Scsg),
        };
        Self {
            name: variant.name().into(),
            layout,
            grid: default_path_grid(),
            config: SolverConfig::default(),
        }
    }

    /// Singleton groups: the plain Lasso.
    pub fn lasso() -> Self {
        Self {
            name: "lasso".into(),
            layout: |d| GroupLayout::singletons(d.n_nodes() * d.order(), d.order()),
            grid: default_path_grid(),
            config: SolverConfig::default(),
        }
    }
}

impl EdgeEstimator for PathEstimator {
    fn name(&self) -> &str {
        &self.name
    }

    fn score(&self, series: &TimeSeries, order: usize) -> Result<ScoredEdgeSet> {
        let n = series.n_nodes();
        let problems: Vec<Problem> = designs(series, order)?
            .iter()
            .map(|d| Problem::new(d, (self.layout)(d)))
            .collect();
        let lmax = problems
            .iter()
            .map(Problem::lambda_max)
            .collect::<Result<Vec<f64>>>()?
            .into_iter()
            .fold(0.0, f64::max);
        let grid = match &self.grid {
            LambdaGrid::Relative { .. } => LambdaGrid::Explicit(self.grid.values(lmax)),
            explicit => explicit.clone(),
        };
        let nodes = problems
            .par_iter()
            .enumerate()
            .map(|(i, p)| {
                let stats = entry_lambdas(p, &grid, &self.config, n)?;
                Ok(NodeScores {
                    target: i,
                    coeffs: Default::default(),
                    stats,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ScoredEdgeSet::from_nodes(self.name.clone(), n, &nodes)?.with_param("lambda_max", lmax))
    }
}

pub struct LeastSquares {
    pub aggregation: LagAggregation,
}

impl EdgeEstimator for LeastSquares {
    fn name(&self) -> &str {
        "ls"
    }

    fn score(&self, series: &TimeSeries, order: usize) -> Result<ScoredEdgeSet> {
        let nodes = designs(series, order)?
            .par_iter()
            .map(|d| least_squares_fit(d, self.aggregation))
            .collect::<Result<Vec<_>>>()?;
        ScoredEdgeSet::from_nodes("ls", series.n_nodes(), &nodes)
    }
}

pub struct Ridge {
    pub penalty: f64,
    pub aggregation: LagAggregation,
}

impl EdgeEstimator for Ridge {
    fn name(&self) -> &str {
        "ridge"
    }

    fn score(&self, series: &TimeSeries, order: usize) -> Result<ScoredEdgeSet> {
        let nodes = designs(series, order)?
            .par_iter()
            .map(|d| ridge_fit(d, self.penalty, self.aggregation))
            .collect::<Result<Vec<_>>>()?;
        Ok(
            ScoredEdgeSet::from_nodes("ridge", series.n_nodes(), &nodes)?
                .with_param("ridge_penalty", self.penalty),
        )
    }
}

/// Neighborhood selection on contemporaneous samples (ignores `order`).
pub struct NeighborhoodSelection {
    pub grid: LambdaGrid,
    pub config: SolverConfig,
}

impl EdgeEstimator for NeighborhoodSelection {
    fn name(&self) -> &str {
        "mb"
    }

    fn score(&self, series: &TimeSeries, _order: usize) -> Result<ScoredEdgeSet> {
        mb_path_scores(series, &self.grid, &self.config)
    }
}

/// Name-keyed collection of estimators.
#[derive(Default)]
pub struct Registry {
    entries: BTreeMap<String, Box<dyn EdgeEstimator>>,
}

impl Registry {
    pub fn new() -> Self {
        Self::default()
    }

    /// scsg, sg, lasso, ls, ridge, mb.
    pub fn with_defaults() -> Self {
        let mut r = Self::new();
        r.register(Box::new(PathEstimator::group(Variant::Scsg)));
        r.register(Box::new(PathEstimator::group(Variant::Sg)));
        r.register(Box::new(PathEstimator::lasso()));
        r.register(Box::new(LeastSquares {
            aggregation: LagAggregation::L2,
        }));
        r.register(Box::new(Ridge {
            penalty: DEFAULT_RIDGE_PENALTY,
            aggregation: LagAggregation::L2,
        }));
        r.register(Box::new(NeighborhoodSelection {
            grid: default_path_grid(),
            config: SolverConfig::default(),
        }));
        r
    }

    /// Replaces any estimator already registered under the same name.
    pub fn register(&mut self, estimator: Box<dyn EdgeEstimator>) {
        self.entries.insert(estimator.name().to_string(), estimator);
    }

    pub fn get(&self, name: &str) -> Option<&dyn EdgeEstimator> {
        self.entries.get(name).map(|b| b.as_ref())
    }

    pub fn names(&self) -> Vec<&str> {
        self.entries.keys().map(String::as_str).collect()
    }

    /// Look up several names, failing on the first unknown one.
    pub fn select(&self, names: &[&str]) -> Result<Vec<&dyn EdgeEstimator>> {
        names
            .iter()
            .map(|n| {
                self.get(n).ok_or_else(|| {
                    Error::InvalidArgument(format!(
                        "unknown estimator `{n}` (known: {})",
                        self.names().join(", ")
                    ))
                })
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{simulate, winterhalder_network, Init};

    #[test]
    fn defaults_registered() {
        let r = Registry::with_defaults();
        assert_eq!(r.names(), vec!["lasso", "ls", "mb", "ridge", "scsg", "sg"]);
        assert!(r.select(&["scsg", "nope"]).is_err());
    }

    #[test]
    fn every_estimator_scores_all_cross_edges() {
        let s = simulate(&winterhalder_network(), 400, 5, Init::Stationary)
            .unwrap()
            .normalized()
            .unwrap();
        let r = Registry::with_defaults();
        for name in r.names() {
            let out = r.get(name).unwrap().score(&s, 5).unwrap();
            assert_eq!(out.scores.len(), 12, "{name}");
            assert!(out.scores.values().all(|v| v.is_finite() && *v >= 0.0));
            assert_eq!(out.estimator, name);
        }
    }

    #[test]
    fn scsg_ranks_true_edges_first() {
        let m = winterhalder_network();
        let s = simulate(&m, 2000, 11, Init::Stationary)
            .unwrap()
            .normalized()
            .unwrap();
        let out = PathEstimator::group(Variant::Scsg).score(&s, 5).unwrap();
        let truth: Vec<_> = m.support().cross_edges().collect();
        let min_true = truth
            .iter()
            .map(|&(i, j)| out.get(i, j).unwrap())
            .fold(f64::INFINITY, f64::min);
        let max_false = out
            .scores
            .iter()
            .filter(|(e, _)| !truth.contains(e))
            .map(|(_, &v)| v)
            .fold(0.0, f64::max);
        assert!(min_true > max_false, "{min_true} vs {max_false}");
    }
}
