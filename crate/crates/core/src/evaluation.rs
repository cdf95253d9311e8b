//! Blocked cross-validation, Monte-Carlo recovery trials and ROC curves.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::baselines::ScoredEdgeSet;
use crate::error::{Error, Result};
use crate::estimators::EdgeEstimator;
use crate::model::{is_stable, simulate, Init, MarModel, SparsityPattern, TimeSeries};
use crate::seed;
use crate::solver::{build_design, GroupLayout, LambdaGrid, Problem, SolverConfig};
use crate::Variant;

/// Directed edges `(i, j)`: node `j` influences node `i`.
pub type EdgeSet = BTreeSet<(usize, usize)>;

/// Held-out errors for one node.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CvResult {
    pub target: usize,
    /// Decreasing penalties.
    pub lambdas: Vec<f64>,
    /// `fold_errors[f][k]`: mean squared residual on fold `f` at `lambdas[k]`.
    pub fold_errors: Vec<Vec<f64>>,
    pub mean_errors: Vec<f64>,
    pub selected_index: usize,
    pub selected_lambda: f64,
    /// Half-open design row ranges `[start, end)`.
    pub folds: Vec<(usize, usize)>,
    pub lambda_max: f64,
}

/// Contiguous row blocks of nearly equal size.
pub fn fold_bounds(n_rows: usize, folds: usize) -> Result<Vec<(usize, usize)>> {
    if folds < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 folds, got {folds}"
        )));
    }
    if n_rows < folds {
        return Err(Error::TooShort(format!(
            "{n_rows} design rows cannot form {folds} folds"
        )));
    }
    Ok((0..folds)
        .map(|f| (f * n_rows / folds, (f + 1) * n_rows / folds))
        .collect())
}

/// Options shared by cross-validation and recovery trials.
#[derive(Debug, Clone, PartialEq)]
pub struct CvOptions {
    pub folds: usize,
    pub grid: LambdaGrid,
    pub solver: SolverConfig,
}

impl Default for CvOptions {
    fn default() -> Self {
        Self {
            folds: 10,
            grid: LambdaGrid::default(),
            solver: SolverConfig::default(),
        }
    }
}

/// K-fold cross-validation of the penalty for one node. A relative grid is
/// taken relative to the full-data `lambda_max`. The selected penalty
/// minimizes the average held-out error; ties go to the larger penalty.
pub fn cross_validate(
    series: &TimeSeries,
    target: usize,
    order: usize,
    variant: Variant,
    opts: &CvOptions,
) -> Result<CvResult> {
    let design = build_design(series, target, order)?;
    let layout = GroupLayout::for_variant(&design, variant);
    let n = design.n_rows();
    let folds = fold_bounds(n, opts.folds)?;
    let x = design.x();
    let y = design.y();
    let lambda_max = Problem::new(&design, layout.clone()).lambda_max()?;
    let lambdas = opts.grid.values(lambda_max);
    if lambdas.is_empty() {
        return Err(Error::InvalidArgument("empty lambda grid".into()));
    }

    let full_q = x.tr_mul(x);
    let full_c = x.tr_mul(y);
    let full_yy = y.norm_squared();

    let fold_errors = folds
        .par_iter()
        .map(|&(lo, hi)| -> Result<Vec<f64>> {
            let xf = x.rows(lo, hi - lo);
            let yf = y.rows(lo, hi - lo);
            let m = (n - (hi - lo)) as f64;
            let q: DMatrix<f64> = (&full_q - xf.tr_mul(&xf)) / m;
            let c: DVector<f64> = (&full_c - xf.tr_mul(&yf)) / m;
            let yy = (full_yy - yf.norm_squared()) / m;
            let problem = Problem::from_gram(q, c, yy, layout.clone());
            let mut warm: Option<DVector<f64>> = None;
            let mut errs = Vec::with_capacity(lambdas.len());
            for &lambda in &lambdas {
                let sol = problem.solve(lambda, &opts.solver, warm.as_ref())?;
                let resid = yf - xf * &sol.coeffs;
                errs.push(resid.norm_squared() / (hi - lo) as f64);
                warm = Some(sol.coeffs);
            }
            Ok(errs)
        })
        .collect::<Result<Vec<_>>>()?;

    let mean_errors: Vec<f64> = (0..lambdas.len())
        .map(|k| fold_errors.iter().map(|f| f[k]).sum::<f64>() / folds.len() as f64)
        .collect();
    // strict comparison keeps the earliest (largest) penalty on ties
    let mut selected_index = 0;
    for (k, &e) in mean_errors.iter().enumerate() {
        if e < mean_errors[selected_index] {
            selected_index = k;
        }
    }
    Ok(CvResult {
        target,
        selected_lambda: lambdas[selected_index],
        lambdas,
        fold_errors,
        mean_errors,
        selected_index,
        folds,
        lambda_max,
    })
}

/// Cross-validate every node, then refit on all rows at the selected
/// penalty. Returns discovered edges `(i, j)`; for SCSG self-edges are
/// excluded, for SG they are included.
pub fn discover_edges(
    series: &TimeSeries,
    order: usize,
    variant: Variant,
    opts: &CvOptions,
) -> Result<(EdgeSet, Vec<f64>)> {
    let per_node = (0..series.n_nodes())
        .into_par_iter()
        .map(|i| -> Result<(Vec<(usize, usize)>, f64)> {
            let cv = cross_validate(series, i, order, variant, opts)?;
            let design = build_design(series, i, order)?;
            let layout = GroupLayout::for_variant(&design, variant);
            let sol =
                Problem::new(&design, layout).solve(cv.selected_lambda, &opts.solver, None)?;
            Ok((
                sol.active_nodes().into_iter().map(|j| (i, j)).collect(),
                cv.selected_lambda,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut edges = BTreeSet::new();
    let mut lambdas = Vec::with_capacity(per_node.len());
    for (e, l) in per_node {
        edges.extend(e);
        lambdas.push(l);
    }
    Ok((edges, lambdas))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialOutcome {
    pub trial: usize,
    pub seed: u64,
    pub edges: Vec<(usize, usize)>,
    pub selected_lambdas: Vec<f64>,
    pub exact: bool,
}

/// Aggregated results of repeated simulate-and-estimate trials.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RecoveryTally {
    pub variant: Variant,
    pub n_samples: usize,
    pub n_trials: usize,
    pub seed: u64,
    /// Edges that count as truth (cross-edges for SCSG, all for SG).
    pub true_edges: Vec<(usize, usize)>,
    /// Detection counts for every edge ever discovered or true.
    pub counts: BTreeMap<(usize, usize), usize>,
    pub trials: Vec<TrialOutcome>,
}

impl RecoveryTally {
    pub fn count(&self, i: usize, j: usize) -> usize {
        self.counts.get(&(i, j)).copied().unwrap_or(0)
    }

    pub fn rate(&self, i: usize, j: usize) -> f64 {
        self.count(i, j) as f64 / self.n_trials as f64
    }

    pub fn exact_recoveries(&self) -> usize {
        self.trials.iter().filter(|t| t.exact).count()
    }

    /// Discovered edges outside the truth, most frequent first (ties by edge).
    pub fn false_edges(&self) -> Vec<((usize, usize), usize)> {
        let truth: BTreeSet<_> = self.true_edges.iter().copied().collect();
        let mut v: Vec<_> = self
            .counts
            .iter()
            .filter(|(e, &c)| c > 0 && !truth.contains(e))
            .map(|(&e, &c)| (e, c))
            .collect();
        v.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        v
    }
}

fn tracked_edges(pattern: &SparsityPattern, variant: Variant) -> BTreeSet<(usize, usize)> {
    match variant {
        Variant::Scsg => pattern.cross_edges().collect(),
        Variant::Sg => pattern.edges().clone(),
    }
}

/// Simulate `n_trials` stationary realizations (trial `k` uses seed
/// `seed::derive(seed, &[k])`) and estimate each with per-node CV.
pub fn recovery_trial(
    model: &MarModel,
    n_samples: usize,
    n_trials: usize,
    variant: Variant,
    seed: u64,
    opts: &CvOptions,
) -> Result<RecoveryTally> {
    let stab = is_stable(model, 0.0)?;
    if !stab.stable {
        return Err(Error::Unstable {
            radius: stab.spectral_radius,
        });
    }
    let truth = tracked_edges(&model.support(), variant);
    let trials = (0..n_trials)
        .into_par_iter()
        .map(|k| -> Result<TrialOutcome> {
            let s = seed::derive(seed, &[k as u64]);
            let series = simulate(model, n_samples, s, Init::Stationary)?;
            let (edges, selected_lambdas) = discover_edges(&series, model.order(), variant, opts)?;
            Ok(TrialOutcome {
                trial: k,
                seed: s,
                exact: edges == truth,
                edges: edges.into_iter().collect(),
                selected_lambdas,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut counts: BTreeMap<(usize, usize), usize> = truth.iter().map(|&e| (e, 0)).collect();
    for t in &trials {
        for &e in &t.edges {
            *counts.entry(e).or_insert(0) += 1;
        }
    }
    Ok(RecoveryTally {
        variant,
        n_samples,
        n_trials,
        seed,
        true_edges: truth.into_iter().collect(),
        counts,
        trials,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RocPoint {
    /// Edges with statistic `>= threshold` are detected.
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RocCurve {
    pub points: Vec<RocPoint>,
    pub auc: f64,
}

/// Sweep a threshold over per-edge statistics. Candidates are all ordered
/// pairs `i != j`; positives are the cross-edges of `truth`. Edges missing
/// from `scores` get the statistic `0`.
pub fn roc_curve(scores: &ScoredEdgeSet, truth: &SparsityPattern) -> Result<RocCurve> {
    let n = truth.n_nodes();
    let mut items: Vec<(f64, bool)> = Vec::with_capacity(n * n.saturating_sub(1));
    for i in 0..n {
        for j in 0..n {
            if i != j {
                items.push((scores.get(i, j).unwrap_or(0.0), truth.contains(i, j)));
            }
        }
    }
    roc_from_labels(&items)
}

/// ROC curve from `(statistic, is_positive)` pairs, anchored at `(0,0)`
/// (threshold `+inf`) and `(1,1)` (threshold `-inf`).
pub fn roc_from_labels(items: &[(f64, bool)]) -> Result<RocCurve> {
    let pos = items.iter().filter(|x| x.1).count();
    let neg = items.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::InvalidArgument(format!(
            "ROC needs positives and negatives, got {pos} and {neg}"
        )));
    }
    if items.iter().any(|x| x.0.is_nan()) {
        return Err(Error::Numerical("NaN statistic".into()));
    }
    let mut sorted = items.to_vec();
    sorted.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut points = vec![RocPoint {
        threshold: f64::INFINITY,
        fpr: 0.0,
        tpr: 0.0,
    }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut k = 0;
    while k < sorted.len() {
        let t = sorted[k].0;
        while k < sorted.len() && sorted[k].0 == t {
            if sorted[k].1 {
                tp += 1
            } else {
                fp += 1
            }
            k += 1;
        }
        points.push(RocPoint {
            threshold: t,
            fpr: fp as f64 / neg as f64,
            tpr: tp as f64 / pos as f64,
        });
    }
    points.push(RocPoint {
        threshold: f64::NEG_INFINITY,
        fpr: 1.0,
        tpr: 1.0,
    });
    let auc = points
        .windows(2)
        .map(|w| (w[1].fpr - w[0].fpr) * (w[1].tpr + w[0].tpr) / 2.0)
        .sum::<f64>()
        .clamp(0.0, 1.0);
    Ok(RocCurve { points, auc })
}

/// One stationary realization (seed `seed`), normalized to unit node power,
/// scored by each estimator against the model's support.
pub fn roc(
    model: &MarModel,
    n_samples: usize,
    estimators: &[&dyn EdgeEstimator],
    seed: u64,
) -> Result<BTreeMap<String, RocCurve>> {
    let stab = is_stable(model, 0.0)?;
    if !stab.stable {
        return Err(Error::Unstable {
            radius: stab.spectral_radius,
        });
    }
    let series = simulate(model, n_samples, seed, Init::Stationary)?.normalized()?;
    let truth = model.support();
    estimators
        .iter()
        .map(|e| {
            let scores = e.score(&series, model.order())?;
            Ok((e.name().to_string(), roc_curve(&scores, &truth)?))
        })
        .collect()
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0.0; v.len()];
    let mut k = 0;
    while k < idx.len() {
        let mut e = k;
        while e + 1 < idx.len() && v[idx[e + 1]] == v[idx[k]] {
            e += 1;
        }
        let avg = (k + e) as f64 / 2.0 + 1.0;
        for &i in &idx[k..=e] {
            r[i] = avg;
        }
        k = e + 1;
    }
    r
}

/// Spearman rank correlation with average ranks for ties. `NaN` when
/// either input is constant.
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let (ra, rb) = (ranks(a), ranks(b));
    let n = a.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = ra.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = rb.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{
        circle_pattern, draw_random_model, winterhalder_network, DEFAULT_MAX_ATTEMPTS,
    };
    use rand::Rng;

    #[test]
    fn folds_cover_rows() {
        let f = fold_bounds(23, 10).unwrap();
        assert_eq!(f.first().unwrap().0, 0);
        assert_eq!(f.last().unwrap().1, 23);
        assert!(f.windows(2).all(|w| w[0].1 == w[1].0));
        assert!(f.iter().all(|(a, b)| b > a));
        assert!(fold_bounds(9, 10).is_err());
    }

    #[test]
    fn single_point_grid_selected() {
        let s = simulate(&winterhalder_network(), 200, 1, Init::Stationary).unwrap();
        let opts = CvOptions {
            grid: LambdaGrid::Explicit(vec![0.123]),
            ..Default::default()
        };
        let cv = cross_validate(&s, 0, 5, Variant::Scsg, &opts).unwrap();
        assert_eq!(cv.selected_lambda, 0.123);
        assert_eq!(cv.fold_errors.len(), 10);
    }

    #[test]
    fn ties_prefer_larger_lambda() {
        // all-zero target: every penalty gives identical held-out errors
        let mut v = simulate(&winterhalder_network(), 200, 1, Init::Stationary)
            .unwrap()
            .values()
            .clone();
        v.column_mut(3).fill(0.0);
        let s = TimeSeries::new(v).unwrap();
        let opts = CvOptions {
            grid: LambdaGrid::Explicit(vec![0.3, 0.2, 0.1]),
            ..Default::default()
        };
        let cv = cross_validate(&s, 3, 5, Variant::Sg, &opts).unwrap();
        assert_eq!(cv.selected_index, 0);
    }

    #[test]
    fn cv_scale_homogeneity() {
        let s = simulate(&winterhalder_network(), 300, 4, Init::Stationary).unwrap();
        let c = 3.0;
        let scaled = TimeSeries::new(s.values() * c).unwrap();
        let grid = vec![0.2, 0.1, 0.05, 0.02, 0.01];
        let a = cross_validate(
            &s,
            1,
            5,
            Variant::Scsg,
            &CvOptions {
                grid: LambdaGrid::Explicit(grid.clone()),
                ..Default::default()
            },
        )
        .unwrap();
        let b = cross_validate(
            &scaled,
            1,
            5,
            Variant::Scsg,
            &CvOptions {
                grid: LambdaGrid::Explicit(grid.iter().map(|l| l * c * c).collect()),
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(a.selected_index, b.selected_index);
    }

    #[test]
    fn roc_oracle_and_anchors() {
        let items: Vec<(f64, bool)> = (0..20)
            .map(|k| (if k < 5 { 1.0 } else { 0.0 }, k < 5))
            .collect();
        let r = roc_from_labels(&items).unwrap();
        assert_eq!(r.auc, 1.0);
        assert_eq!((r.points[0].fpr, r.points[0].tpr), (0.0, 0.0));
        let last = r.points.last().unwrap();
        assert_eq!((last.fpr, last.tpr), (1.0, 1.0));

        // all tied: diagonal
        let tied: Vec<(f64, bool)> = (0..10).map(|k| (0.0, k % 2 == 0)).collect();
        assert!((roc_from_labels(&tied).unwrap().auc - 0.5).abs() < 1e-12);
        assert!(roc_from_labels(&[(1.0, true)]).is_err());
    }

    #[test]
    fn random_statistic_is_a_coin_flip() {
        let mut aucs = Vec::new();
        for s in 0..20u64 {
            let mut rng = seed::rng(seed::derive(99, &[s]));
            let items: Vec<(f64, bool)> = (0..400)
                .map(|k| (rng.random::<f64>(), k % 5 == 0))
                .collect();
            aucs.push(roc_from_labels(&items).unwrap().auc);
        }
        let mean = aucs.iter().sum::<f64>() / aucs.len() as f64;
        assert!((mean - 0.5).abs() < 0.1, "{mean}");
    }

    #[test]
    fn spearman_basics() {
        assert!((spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]) - 1.0).abs() < 1e-12);
        assert!((spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]) + 1.0).abs() < 1e-12);
        assert!((spearman(&[1.0, 1.0, 2.0], &[1.0, 1.0, 2.0]) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn tally_is_deterministic() {
        let m = draw_random_model(
            &circle_pattern(),
            2,
            0.3,
            DMatrix::identity(4, 4),
            5,
            DEFAULT_MAX_ATTEMPTS,
        )
        .unwrap();
        let opts = CvOptions::default();
        let a = recovery_trial(&m, 150, 4, Variant::Scsg, 17, &opts).unwrap();
        let b = recovery_trial(&m, 150, 4, Variant::Scsg, 17, &opts).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.true_edges.len(), 4);
        assert!(a.counts.values().all(|&c| c <= 4));
    }
}
