//! Cyclic block coordinate descent on the Gram form of the objective.
//!
//! With `Q = X^T X / n` and `c = X^T y / n` the objective is
//! `a^T Q a - 2 c^T a + y^T y / n + lambda * sum_g ||a_g||`. Each block update
//! minimizes exactly over one group with the others held fixed: the block is
//! zero iff `||r_g|| <= lambda / 2` for the partial residual
//! `r_g = c_g - sum_{h != g} Q_gh a_h`, and otherwise solves
//! `(Q_gg + lambda / (2 ||a_g||) I) a_g = r_g` through a scalar root find on
//! `||a_g||` in the eigenbasis of `Q_gg`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use super::design::RegressionDesign;
use crate::error::{Error, Result};
use crate::Variant;

/// Contiguous coefficient block.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Group {
    pub start: usize,
    pub len: usize,
    /// Node whose lags this block holds.
    pub node: usize,
    pub penalized: bool,
}

impl Group {
    pub fn range(&self) -> std::ops::Range<usize> {
        self.start..self.start + self.len
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroupLayout {
    pub groups: Vec<Group>,
    pub n_cols: usize,
}

impl GroupLayout {
    /// One group per node; SCSG leaves the target's own group unpenalized.
    pub fn for_variant(design: &RegressionDesign, variant: Variant) -> Self {
        Self::node_groups(design.n_nodes(), design.order(), design.target(), variant)
    }

    pub fn node_groups(n_nodes: usize, order: usize, target: usize, variant: Variant) -> Self {
        let groups = (0..n_nodes)
            .map(|node| Group {
                start: node * order,
                len: order,
                node,
                penalized: !(variant == Variant::Scsg && node == target),
            })
            .collect();
        Self {
            groups,
            n_cols: n_nodes * order,
        }
    }

    /// Every column its own penalized group (plain Lasso). Columns of node
    /// `k` are `k * order .. (k + 1) * order`.
    pub fn singletons(n_cols: usize, order: usize) -> Self {
        let groups = (0..n_cols)
            .map(|c| Group {
                start: c,
                len: 1,
                node: c / order,
                penalized: true,
            })
            .collect();
        Self { groups, n_cols }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    /// Sweep-level tolerance on the largest coefficient change.
    pub tol: f64,
    /// KKT residual accepted as optimal.
    pub kkt_tol: f64,
    pub max_iter: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            kkt_tol: 1e-7,
            max_iter: 100_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupLassoSolution {
    pub coeffs: DVector<f64>,
    pub layout: GroupLayout,
    pub lambda: f64,
    /// `(2 / lambda) (c - Q a)`; zero when `lambda == 0`.
    pub subgradient: DVector<f64>,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    pub kkt_residual: f64,
}

impl GroupLassoSolution {
    pub fn group_norm(&self, g: usize) -> f64 {
        self.coeffs.rows_range(self.layout.groups[g].range()).norm()
    }

    /// Indices of nonzero groups.
    pub fn active_groups(&self) -> Vec<usize> {
        (0..self.layout.groups.len())
            .filter(|&g| self.group_norm(g) > 0.0)
            .collect()
    }

    /// Nodes with a nonzero penalized group, i.e. discovered parents. An
    /// unpenalized self group is never reported.
    pub fn active_nodes(&self) -> Vec<usize> {
        let mut nodes: Vec<usize> = self
            .layout
            .groups
            .iter()
            .enumerate()
            .filter(|(g, grp)| grp.penalized && self.group_norm(*g) > 0.0)
            .map(|(_, grp)| grp.node)
            .collect();
        nodes.dedup();
        nodes
    }

    pub fn n_active_penalized(&self) -> usize {
        self.layout
            .groups
            .iter()
            .enumerate()
            .filter(|(g, grp)| grp.penalized && self.group_norm(*g) > 0.0)
            .count()
    }
}

/// Penalty values to sweep.
#[derive(Debug, Clone, PartialEq)]
pub enum LambdaGrid {
    /// `n_points` log-spaced values from `lambda_max` down to
    /// `lo_frac * lambda_max`.
    Relative { lo_frac: f64, n_points: usize },
    /// Absolute values.
    Explicit(Vec<f64>),
}

impl Default for LambdaGrid {
    fn default() -> Self {
        LambdaGrid::Relative {
            lo_frac: 0.05,
            n_points: 50,
        }
    }
}

impl LambdaGrid {
    /// Concrete values, in decreasing order.
    pub fn values(&self, lambda_max: f64) -> Vec<f64> {
        let mut v = match self {
            LambdaGrid::Relative { lo_frac, n_points } => match *n_points {
                0 => vec![],
                1 => vec![lambda_max],
                n => (0..n)
                    .map(|k| lambda_max * lo_frac.powf(k as f64 / (n - 1) as f64))
                    .collect(),
            },
            LambdaGrid::Explicit(v) => v.clone(),
        };
        v.sort_by(|a, b| b.total_cmp(a));
        v
    }

    /// Multiply every absolute value by `factor` (explicit grids only).
    pub fn scaled(&self, factor: f64) -> Self {
        match self {
            LambdaGrid::Explicit(v) => LambdaGrid::Explicit(v.iter().map(|x| x * factor).collect()),
            other => other.clone(),
        }
    }
}

struct BlockEigen {
    values: DVector<f64>,
    vectors: DMatrix<f64>,
}

/// Gram-form problem for one target node.
pub struct Problem {
    q: DMatrix<f64>,
    c: DVector<f64>,
    yy: f64,
    layout: GroupLayout,
    blocks: Vec<BlockEigen>,
}

impl Problem {
    pub fn new(design: &RegressionDesign, layout: GroupLayout) -> Self {
        let n = design.n_rows().max(1) as f64;
        let x = design.x();
        let q = x.tr_mul(x) / n;
        let c = x.tr_mul(design.y()) / n;
        let yy = design.y().norm_squared() / n;
        Self::from_gram(q, c, yy, layout)
    }

    /// From precomputed `Q = X^T X / n`, `c = X^T y / n`, `yy = y^T y / n`.
    pub fn from_gram(q: DMatrix<f64>, c: DVector<f64>, yy: f64, layout: GroupLayout) -> Self {
        assert_eq!(q.nrows(), layout.n_cols, "Gram size does not match layout");
        let blocks = layout
            .groups
            .iter()
            .map(|g| {
                let qgg = q.view((g.start, g.start), (g.len, g.len)).into_owned();
                let eig = SymmetricEigen::new(qgg);
                BlockEigen {
                    values: eig.eigenvalues.map(|v| v.max(0.0)),
                    vectors: eig.eigenvectors,
                }
            })
            .collect();
        Self {
            q,
            c,
            yy,
            layout,
            blocks,
        }
    }

    pub fn layout(&self) -> &GroupLayout {
        &self.layout
    }

    pub fn objective(&self, a: &DVector<f64>, lambda: f64) -> f64 {
        let fit = a.dot(&(&self.q * a)) - 2.0 * self.c.dot(a) + self.yy;
        let pen: f64 = self
            .layout
            .groups
            .iter()
            .filter(|g| g.penalized)
            .map(|g| a.rows_range(g.range()).norm())
            .sum();
        fit + lambda * pen
    }

    /// Least-squares fit of the unpenalized groups alone (all groups when
    /// `everything` is set).
    fn unpenalized_fit(&self, everything: bool) -> Result<DVector<f64>> {
        let cols: Vec<usize> = self
            .layout
            .groups
            .iter()
            .filter(|g| everything || !g.penalized)
            .flat_map(|g| g.range())
            .collect();
        let mut a = DVector::zeros(self.layout.n_cols);
        if cols.is_empty() {
            return Ok(a);
        }
        let q_uu = self.q.select_rows(cols.iter()).select_columns(cols.iter());
        let c_u = DMatrix::from_iterator(cols.len(), 1, cols.iter().map(|&k| self.c[k]));
        let sol =
            crate::covariance::spd_solve(&q_uu, &c_u, "unpenalized self-regression X_i^T X_i")?;
        for (pos, &k) in cols.iter().enumerate() {
            a[k] = sol[(pos, 0)];
        }
        Ok(a)
    }

    /// Smallest penalty whose solution has every penalized group at zero.
    pub fn lambda_max(&self) -> Result<f64> {
        let a = self.unpenalized_fit(false)?;
        let grad = &self.c - &self.q * &a;
        Ok(self
            .layout
            .groups
            .iter()
            .filter(|g| g.penalized)
            .map(|g| 2.0 * grad.rows_range(g.range()).norm())
            .fold(0.0, f64::max))
    }

    /// KKT violation of `a` (see [`design_kkt_residual`] for the definition).
    pub fn kkt_residual(&self, a: &DVector<f64>, lambda: f64) -> f64 {
        let grad = &self.c - &self.q * a;
        kkt_from_gradient(&self.layout, a, &grad, lambda)
    }

    fn block_update(&self, g: usize, r: &DVector<f64>, lambda: f64) -> DVector<f64> {
        let group = &self.layout.groups[g];
        let eig = &self.blocks[g];
        let w = eig.vectors.tr_mul(r);
        let scale = eig.values.amax().max(1e-300);
        if !group.penalized || lambda == 0.0 {
            let coef = DVector::from_fn(w.len(), |k, _| {
                let e = eig.values[k];
                if e > 1e-13 * scale {
                    w[k] / e
                } else {
                    0.0
                }
            });
            return &eig.vectors * coef;
        }
        let half = 0.5 * lambda;
        let wn = w.norm();
        // same expression as lambda_max, so lambda == lambda_max stays zero
        if 2.0 * r.norm() <= lambda {
            return DVector::zeros(group.len);
        }
        // f(t) = ||a(t)|| / t - 1 with a(t) = (Q_gg + half / t)^{-1} r;
        // decreasing in t, positive at 0+, root is ||a_g||.
        let f = |t: f64| -> f64 {
            let s: f64 = w
                .iter()
                .zip(eig.values.iter())
                .map(|(wk, ek)| (wk / (ek * t + half)).powi(2))
                .sum();
            s.sqrt() - 1.0
        };
        let mut lo = 0.0_f64;
        let e_min = eig.values.min();
        let mut hi = if e_min > 1e-13 * scale {
            (wn - half) / e_min
        } else {
            (wn - half) / scale
        };
        hi = hi.max(f64::MIN_POSITIVE);
        let mut guard = 0;
        while f(hi) > 0.0 && guard < 200 {
            lo = hi;
            hi *= 2.0;
            guard += 1;
        }
        let mut t = 0.5 * (lo + hi);
        for _ in 0..200 {
            let ft = f(t);
            if ft == 0.0 {
                break;
            }
            if ft > 0.0 {
                lo = t;
            } else {
                hi = t;
            }
            // Newton step on f, kept inside the bracket.
            let s: f64 = w
                .iter()
                .zip(eig.values.iter())
                .map(|(wk, ek)| (wk / (ek * t + half)).powi(2))
                .sum();
            let ds: f64 = w
                .iter()
                .zip(eig.values.iter())
                .map(|(wk, ek)| -2.0 * wk * wk * ek / (ek * t + half).powi(3))
                .sum();
            let df = 0.5 * ds / s.sqrt();
            let newton = if df < 0.0 { t - ft / df } else { f64::NAN };
            let next = if newton.is_finite() && newton > lo && newton < hi {
                newton
            } else {
                0.5 * (lo + hi)
            };
            if (next - t).abs() <= 1e-15 * t.max(f64::MIN_POSITIVE) || hi - lo <= 1e-15 * hi {
                t = next;
                break;
            }
            t = next;
        }
        let coef = DVector::from_fn(w.len(), |k, _| w[k] * t / (eig.values[k] * t + half));
        &eig.vectors * coef
    }

    pub fn solve(
        &self,
        lambda: f64,
        config: &SolverConfig,
        warm_start: Option<&DVector<f64>>,
    ) -> Result<GroupLassoSolution> {
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "lambda must be a nonnegative number, got {lambda}"
            )));
        }
        let n_cols = self.layout.n_cols;
        let mut a = match warm_start {
            Some(w) if w.len() == n_cols => w.clone(),
            Some(w) => {
                return Err(Error::Dimension(format!(
                    "warm start has {} entries, expected {n_cols}",
                    w.len()
                )))
            }
            // Unpenalized limit: direct normal equations when well posed.
            None if lambda == 0.0 => self
                .unpenalized_fit(true)
                .unwrap_or_else(|_| DVector::zeros(n_cols)),
            // Starting from the fit of the unpenalized groups makes every
            // penalized group threshold to exactly zero on the first sweep
            // whenever lambda >= lambda_max.
            None => self
                .unpenalized_fit(false)
                .unwrap_or_else(|_| DVector::zeros(n_cols)),
        };
        if warm_start.is_none() && lambda > 0.0 && lambda >= self.lambda_max()? {
            // the unpenalized fit already satisfies every exclusion condition
            return Ok(self.finish(a, lambda, 0, true));
        }
        let mut qa = &self.q * &a;
        let mut iterations = 0;
        let mut converged = false;
        #[cfg(debug_assertions)]
        let mut last_obj = self.objective(&a, lambda);

        while iterations < config.max_iter {
            iterations += 1;
            let mut max_change = 0.0_f64;
            for (g, group) in self.layout.groups.iter().enumerate() {
                let range = group.range();
                let old = a.rows_range(range.clone()).into_owned();
                let qgg = self
                    .q
                    .view((group.start, group.start), (group.len, group.len));
                let r =
                    self.c.rows_range(range.clone()) - qa.rows_range(range.clone()) + qgg * &old;
                let new = self.block_update(g, &r, lambda);
                let delta = &new - &old;
                let change = delta.amax();
                if change > 0.0 {
                    max_change = max_change.max(change);
                    a.rows_range_mut(range.clone()).copy_from(&new);
                    qa.gemv(1.0, &self.q.columns(group.start, group.len), &delta, 1.0);
                }
            }
            #[cfg(debug_assertions)]
            {
                let obj = self.objective(&a, lambda);
                debug_assert!(
                    obj <= last_obj + 1e-9 * last_obj.abs().max(1.0),
                    "objective increased from {last_obj} to {obj}"
                );
                last_obj = obj;
            }
            if max_change < config.tol || iterations % 10 == 0 {
                // refresh to shed accumulated round-off in the running product
                qa = &self.q * &a;
                let kkt = self.kkt_residual(&a, lambda);
                if kkt < config.kkt_tol || max_change == 0.0 {
                    converged = kkt < config.kkt_tol;
                    break;
                }
            }
        }
        Ok(self.finish(a, lambda, iterations, converged))
    }

    fn finish(
        &self,
        a: DVector<f64>,
        lambda: f64,
        iterations: usize,
        converged: bool,
    ) -> GroupLassoSolution {
        let n_cols = self.layout.n_cols;
        let kkt = self.kkt_residual(&a, lambda);
        let subgradient = if lambda > 0.0 {
            (&self.c - &self.q * &a) * (2.0 / lambda)
        } else {
            DVector::zeros(n_cols)
        };
        GroupLassoSolution {
            objective: self.objective(&a, lambda),
            coeffs: a,
            layout: self.layout.clone(),
            lambda,
            subgradient,
            iterations,
            converged,
            kkt_residual: kkt,
        }
    }

    /// Warm-started solutions along the grid, largest penalty first.
    pub fn path(
        &self,
        grid: &LambdaGrid,
        config: &SolverConfig,
    ) -> Result<Vec<GroupLassoSolution>> {
        let lambdas = grid.values(self.lambda_max()?);
        let mut out: Vec<GroupLassoSolution> = Vec::with_capacity(lambdas.len());
        for lambda in lambdas {
            let warm = out.last().map(|s| s.coeffs.clone());
            out.push(self.solve(lambda, config, warm.as_ref())?);
        }
        Ok(out)
    }
}

fn kkt_from_gradient(
    layout: &GroupLayout,
    a: &DVector<f64>,
    grad: &DVector<f64>,
    lambda: f64,
) -> f64 {
    layout
        .groups
        .iter()
        .map(|g| {
            let gg = grad.rows_range(g.range());
            let ag = a.rows_range(g.range());
            if !g.penalized || lambda == 0.0 {
                return 2.0 * gg.norm();
            }
            let scaled = gg * (2.0 / lambda);
            let norm = ag.norm();
            if norm > 0.0 {
                (scaled - ag / norm).norm()
            } else {
                (scaled.norm() - 1.0).max(0.0)
            }
        })
        .fold(0.0, f64::max)
}

/// Maximum over groups of the KKT violation, computed from `X^T (y - X a)`:
///
/// - active penalized: `||(2 / (lambda n)) X_j^T r - a_j / ||a_j|| ||`
/// - inactive penalized: `max(0, (2 / (lambda n)) ||X_j^T r|| - 1)`
/// - unpenalized (or `lambda == 0`): `(2 / n) ||X_j^T r||`
pub fn design_kkt_residual(
    design: &RegressionDesign,
    layout: &GroupLayout,
    a: &DVector<f64>,
    lambda: f64,
) -> f64 {
    let n = design.n_rows().max(1) as f64;
    let resid = design.y() - design.x() * a;
    let grad = design.x().tr_mul(&resid) / n;
    kkt_from_gradient(layout, a, &grad, lambda)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{simulate, winterhalder_network, Init};
    use crate::solver::{build_design, lambda_max, lambda_path, solve};

    fn design() -> RegressionDesign {
        let s = simulate(&winterhalder_network(), 300, 4, Init::Stationary).unwrap();
        build_design(&s, 2, 5).unwrap()
    }

    #[test]
    fn zero_target_has_zero_lambda_max() {
        let d = design();
        let zero = RegressionDesign::new(0, 5, d.x().clone(), DVector::zeros(d.n_rows())).unwrap();
        assert_eq!(lambda_max(&zero, Variant::Sg).unwrap(), 0.0);
        assert_eq!(lambda_max(&zero, Variant::Scsg).unwrap(), 0.0);
    }

    #[test]
    fn lambda_max_is_the_zero_threshold() {
        let d = design();
        let cfg = SolverConfig::default();
        for variant in [Variant::Sg, Variant::Scsg] {
            let lmax = lambda_max(&d, variant).unwrap();
            let above = solve(&d, lmax * (1.0 + 1e-9), variant, &cfg).unwrap();
            assert!(above.active_nodes().is_empty());
            assert!(above.kkt_residual < 1e-6);
            let below = solve(&d, 0.99 * lmax, variant, &cfg).unwrap();
            assert!(!below.active_nodes().is_empty());
            assert!(below.kkt_residual < 1e-6);
        }
    }

    #[test]
    fn sg_above_lambda_max_is_exactly_zero() {
        let d = design();
        let lmax = lambda_max(&d, Variant::Sg).unwrap();
        let s = solve(&d, 2.0 * lmax, Variant::Sg, &SolverConfig::default()).unwrap();
        assert!(s.coeffs.iter().all(|&v| v == 0.0));
        assert_eq!(crate::solver::kkt_residual(&d, &s, 2.0 * lmax), 0.0);
    }

    #[test]
    fn zero_lambda_is_least_squares() {
        let d = design();
        let s = solve(&d, 0.0, Variant::Sg, &SolverConfig::default()).unwrap();
        let xtx = d.x().tr_mul(d.x());
        let ols = xtx.cholesky().unwrap().solve(&d.x().tr_mul(d.y()));
        assert!((&s.coeffs - ols).amax() < 1e-8);
    }

    #[test]
    fn scsg_self_group_never_reported() {
        let d = design();
        let lmax = lambda_max(&d, Variant::Scsg).unwrap();
        let s = solve(&d, 1.5 * lmax, Variant::Scsg, &SolverConfig::default()).unwrap();
        assert!(s.group_norm(2) > 0.0);
        assert!(s.active_nodes().is_empty());
    }

    #[test]
    fn kkt_detects_perturbation() {
        let d = design();
        let lmax = lambda_max(&d, Variant::Sg).unwrap();
        let mut s = solve(&d, 0.3 * lmax, Variant::Sg, &SolverConfig::default()).unwrap();
        assert!(crate::solver::kkt_residual(&d, &s, s.lambda) < 1e-6);
        let g = s.active_groups()[0];
        s.coeffs[s.layout.groups[g].start] += 0.1;
        assert!(crate::solver::kkt_residual(&d, &s, s.lambda) > 1e-3);
    }

    #[test]
    fn gram_and_design_kkt_agree() {
        let d = design();
        let lmax = lambda_max(&d, Variant::Scsg).unwrap();
        let s = solve(&d, 0.2 * lmax, Variant::Scsg, &SolverConfig::default()).unwrap();
        let direct = crate::solver::kkt_residual(&d, &s, s.lambda);
        assert!((direct - s.kkt_residual).abs() < 1e-8);
    }

    #[test]
    fn path_starts_empty_and_certifies() {
        let d = design();
        let path = lambda_path(
            &d,
            Variant::Sg,
            &LambdaGrid::default(),
            &SolverConfig::default(),
        )
        .unwrap();
        assert_eq!(path.len(), 50);
        assert!(path[0].active_nodes().is_empty());
        let ratio = path[49].lambda / path[0].lambda;
        assert!((ratio - 0.05).abs() < 1e-12);
        for s in &path {
            assert!(s.kkt_residual < 1e-6);
            assert!(s.converged);
        }
    }

    #[test]
    fn rejects_negative_lambda() {
        let d = design();
        assert!(solve(&d, -1.0, Variant::Sg, &SolverConfig::default()).is_err());
    }

    #[test]
    fn grid_values() {
        assert_eq!(
            LambdaGrid::Relative {
                lo_frac: 0.05,
                n_points: 1
            }
            .values(2.0),
            vec![2.0]
        );
        assert_eq!(
            LambdaGrid::Explicit(vec![1.0, 3.0, 2.0]).values(9.0),
            vec![3.0, 2.0, 1.0]
        );
    }
}
