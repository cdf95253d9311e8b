//! MAR model types, builtin networks, random model draws and simulation.

use std::collections::BTreeSet;

use nalgebra::{DMatrix, DVector};
use rand::seq::IndexedRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::covariance::{self, CovarianceMethod};
use crate::error::{Error, Result};
use crate::seed;

const SYMMETRY_TOL: f64 = 1e-12;

/// Multivariate autoregressive model `x(t) = sum_r A_r x(t-r) + u(t)`,
/// `u(t) ~ N(0, noise_cov)`.
///
/// `lags[r - 1]` holds `A_r`; entry `(i, j)` is the influence of node `j` on
/// node `i` at delay `r`.
#[derive(Debug, Clone, PartialEq)]
pub struct MarModel {
    lags: Vec<DMatrix<f64>>,
    noise_cov: DMatrix<f64>,
}

impl MarModel {
    pub fn new(lags: Vec<DMatrix<f64>>, noise_cov: DMatrix<f64>) -> Result<Self> {
        let order = lags.len();
        if order == 0 {
            return Err(Error::InvalidModel("order must be positive".into()));
        }
        let n = lags[0].nrows();
        if n == 0 {
            return Err(Error::InvalidModel("model needs at least one node".into()));
        }
        for (r, a) in lags.iter().enumerate() {
            if a.nrows() != n || a.ncols() != n {
                return Err(Error::InvalidModel(format!(
                    "lag {} matrix is {}x{}, expected {n}x{n}",
                    r + 1,
                    a.nrows(),
                    a.ncols()
                )));
            }
            if a.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidModel(format!(
                    "lag {} has non-finite entries",
                    r + 1
                )));
            }
        }
        if noise_cov.nrows() != n || noise_cov.ncols() != n {
            return Err(Error::InvalidModel(format!(
                "noise covariance is {}x{}, expected {n}x{n}",
                noise_cov.nrows(),
                noise_cov.ncols()
            )));
        }
        let scale = noise_cov.amax().max(1.0);
        for i in 0..n {
            for j in 0..i {
                if (noise_cov[(i, j)] - noise_cov[(j, i)]).abs() > SYMMETRY_TOL * scale {
                    return Err(Error::InvalidModel(
                        "noise covariance is not symmetric".into(),
                    ));
                }
            }
        }
        if noise_cov.clone().cholesky().is_none() {
            return Err(Error::InvalidModel(
                "noise covariance is not positive definite".into(),
            ));
        }
        Ok(Self { lags, noise_cov })
    }

    /// Model of the given shape with every coefficient zero.
    pub fn zeros(n_nodes: usize, order: usize, noise_cov: DMatrix<f64>) -> Result<Self> {
        Self::new(vec![DMatrix::zeros(n_nodes, n_nodes); order], noise_cov)
    }

    /// Build from 0-based `(i, j, r, value)` triples; `r` is the 1-based lag.
    pub fn from_triples(
        n_nodes: usize,
        order: usize,
        triples: &[(usize, usize, usize, f64)],
        noise_cov: DMatrix<f64>,
    ) -> Result<Self> {
        let mut lags = vec![DMatrix::zeros(n_nodes, n_nodes); order];
        for &(i, j, r, v) in triples {
            if i >= n_nodes || j >= n_nodes || r == 0 || r > order {
                return Err(Error::InvalidModel(format!(
                    "coefficient index (i={i}, j={j}, r={r}) out of range"
                )));
            }
            lags[r - 1][(i, j)] = v;
        }
        Self::new(lags, noise_cov)
    }

    pub fn n_nodes(&self) -> usize {
        self.noise_cov.nrows()
    }

    pub fn order(&self) -> usize {
        self.lags.len()
    }

    /// `A_r` for `r` in `1..=order`.
    pub fn lag(&self, r: usize) -> &DMatrix<f64> {
        &self.lags[r - 1]
    }

    pub fn lags(&self) -> &[DMatrix<f64>] {
        &self.lags
    }

    pub fn noise_cov(&self) -> &DMatrix<f64> {
        &self.noise_cov
    }

    /// `a_{i,j}(r)`, 1-based lag.
    pub fn coeff(&self, i: usize, j: usize, r: usize) -> f64 {
        self.lags[r - 1][(i, j)]
    }

    /// Coefficient block `a_{i,j} = [a_{i,j}(1) .. a_{i,j}(p)]`.
    pub fn block(&self, i: usize, j: usize) -> DVector<f64> {
        DVector::from_iterator(self.order(), self.lags.iter().map(|a| a[(i, j)]))
    }

    /// Nonzero coefficients as 0-based `(i, j, r, value)` triples.
    pub fn triples(&self) -> Vec<(usize, usize, usize, f64)> {
        let n = self.n_nodes();
        let mut out = Vec::new();
        for i in 0..n {
            for j in 0..n {
                for r in 1..=self.order() {
                    let v = self.coeff(i, j, r);
                    if v != 0.0 {
                        out.push((i, j, r, v));
                    }
                }
            }
        }
        out
    }

    /// Active set: `(i, j)` such that some `a_{i,j}(r) != 0`.
    pub fn support(&self) -> SparsityPattern {
        let n = self.n_nodes();
        let edges = (0..n)
            .flat_map(|i| (0..n).map(move |j| (i, j)))
            .filter(|&(i, j)| self.lags.iter().any(|a| a[(i, j)] != 0.0))
            .collect();
        SparsityPattern { n_nodes: n, edges }
    }

    /// Parent set `S_i` in increasing node order.
    pub fn parents(&self, i: usize) -> Vec<usize> {
        (0..self.n_nodes())
            .filter(|&j| self.lags.iter().any(|a| a[(i, j)] != 0.0))
            .collect()
    }

    /// Same dynamics with the noise covariance replaced.
    pub fn with_noise_cov(&self, noise_cov: DMatrix<f64>) -> Result<Self> {
        Self::new(self.lags.clone(), noise_cov)
    }
}

/// Set of directed edges `(i, j)`, "node `j` influences node `i`".
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SparsityPattern {
    n_nodes: usize,
    edges: BTreeSet<(usize, usize)>,
}

impl SparsityPattern {
    pub fn new(n_nodes: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        if n_nodes == 0 {
            return Err(Error::InvalidArgument(
                "pattern needs at least one node".into(),
            ));
        }
        let edges: BTreeSet<_> = edges.into_iter().collect();
        if let Some(&(i, j)) = edges.iter().find(|&&(i, j)| i >= n_nodes || j >= n_nodes) {
            return Err(Error::InvalidArgument(format!(
                "edge ({i}, {j}) out of range for {n_nodes} nodes"
            )));
        }
        Ok(Self { n_nodes, edges })
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn edges(&self) -> &BTreeSet<(usize, usize)> {
        &self.edges
    }

    pub fn contains(&self, i: usize, j: usize) -> bool {
        self.edges.contains(&(i, j))
    }

    pub fn parents(&self, i: usize) -> Vec<usize> {
        self.edges
            .range((i, 0)..(i + 1, 0))
            .map(|&(_, j)| j)
            .collect()
    }

    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    /// Edges between distinct nodes.
    pub fn cross_edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.edges.iter().copied().filter(|&(i, j)| i != j)
    }
}

/// Realized series, row `t` is `x(t)^T`.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeries {
    values: DMatrix<f64>,
}

impl TimeSeries {
    pub fn new(values: DMatrix<f64>) -> Result<Self> {
        if values.nrows() == 0 || values.ncols() == 0 {
            return Err(Error::InvalidArgument(
                "time series must be non-empty".into(),
            ));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            let (t, node) = (pos % values.nrows(), pos / values.nrows());
            return Err(Error::Diverged { sample: t, node });
        }
        Ok(Self { values })
    }

    pub fn n_samples(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_nodes(&self) -> usize {
        self.values.ncols()
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn get(&self, t: usize, node: usize) -> f64 {
        self.values[(t, node)]
    }

    /// Sample power `mean_t x_i(t)^2` per node.
    pub fn node_powers(&self) -> Vec<f64> {
        let n = self.n_samples() as f64;
        self.values
            .column_iter()
            .map(|c| c.iter().map(|v| v * v).sum::<f64>() / n)
            .collect()
    }

    /// Rescale every node to unit sample power.
    pub fn normalized(&self) -> Result<Self> {
        let powers = self.node_powers();
        if let Some(node) = powers.iter().position(|&p| p <= 0.0) {
            return Err(Error::Numerical(format!(
                "node {node} has zero sample power"
            )));
        }
        let mut values = self.values.clone();
        for (mut col, p) in values.column_iter_mut().zip(&powers) {
            col /= p.sqrt();
        }
        Self::new(values)
    }

    /// Reorder nodes: output node `k` is input node `perm[k]`.
    pub fn permute_nodes(&self, perm: &[usize]) -> Self {
        let values = DMatrix::from_fn(self.n_samples(), perm.len(), |t, k| {
            self.values[(t, perm[k])]
        });
        Self { values }
    }
}

/// First-order embedding of a `p`-th order model.
#[derive(Debug, Clone, PartialEq)]
pub struct CompanionMatrix {
    matrix: DMatrix<f64>,
    n_nodes: usize,
    order: usize,
}

impl CompanionMatrix {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn order(&self) -> usize {
        self.order
    }

    /// The `A_r` blocks of the top block row.
    pub fn coefficient_blocks(&self) -> Vec<DMatrix<f64>> {
        let n = self.n_nodes;
        (0..self.order)
            .map(|r| self.matrix.view((0, r * n), (n, n)).into_owned())
            .collect()
    }
}

pub fn companion(model: &MarModel) -> CompanionMatrix {
    let n = model.n_nodes();
    let p = model.order();
    let mut m = DMatrix::zeros(n * p, n * p);
    for (r, a) in model.lags().iter().enumerate() {
        m.view_mut((0, r * n), (n, n)).copy_from(a);
    }
    for k in 0..n * (p - 1) {
        m[(n + k, k)] = 1.0;
    }
    CompanionMatrix {
        matrix: m,
        n_nodes: n,
        order: p,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stability {
    pub stable: bool,
    pub spectral_radius: f64,
}

/// Largest eigenvalue modulus of a square matrix.
pub fn spectral_radius(m: &DMatrix<f64>) -> Result<f64> {
    let schur = nalgebra::linalg::Schur::try_new(m.clone(), f64::EPSILON, 10_000)
        .ok_or_else(|| Error::Numerical("eigenvalue iteration did not converge".into()))?;
    Ok(schur
        .complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max))
}

/// Stable iff the companion spectral radius is below `1 - margin`.
pub fn is_stable(model: &MarModel, margin: f64) -> Result<Stability> {
    // all-zero coefficients: the companion matrix is nilpotent
    let radius = if model.lags().iter().all(|a| a.iter().all(|&v| v == 0.0)) {
        0.0
    } else {
        spectral_radius(companion(model).matrix())?
    };
    Ok(Stability {
        stable: radius < 1.0 - margin,
        spectral_radius: radius,
    })
}

pub const DEFAULT_MAX_ATTEMPTS: usize = 1000;

/// Draw i.i.d. `N(0, coeff_std^2)` coefficients on `pattern`, resampling until
/// the model is stable. Returns the first stable draw.
pub fn draw_random_model(
    pattern: &SparsityPattern,
    order: usize,
    coeff_std: f64,
    noise_cov: DMatrix<f64>,
    seed: u64,
    max_attempts: usize,
) -> Result<MarModel> {
    if !(coeff_std > 0.0) || !coeff_std.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "coeff_std must be positive, got {coeff_std}"
        )));
    }
    if order == 0 {
        return Err(Error::InvalidArgument("order must be positive".into()));
    }
    let n = pattern.n_nodes();
    let normal = Normal::new(0.0, coeff_std).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let mut rng = seed::rng(seed);
    for _ in 0..max_attempts {
        let mut lags = vec![DMatrix::zeros(n, n); order];
        for &(i, j) in pattern.edges() {
            for lag in lags.iter_mut() {
                lag[(i, j)] = normal.sample(&mut rng);
            }
        }
        let model = MarModel::new(lags, noise_cov.clone())?;
        if is_stable(&model, 0.0)?.stable {
            return Ok(model);
        }
    }
    Err(Error::StabilityNotReached {
        attempts: max_attempts,
    })
}

/// Random pattern with every self-connection plus, for each node, a
/// uniformly drawn number (0 to `max_parents - 1`) of distinct other parents,
/// so no node has more than `max_parents` parents.
pub fn random_sparse_pattern(
    n_nodes: usize,
    max_parents: usize,
    seed: u64,
) -> Result<SparsityPattern> {
    if max_parents == 0 || n_nodes == 0 {
        return Err(Error::InvalidArgument(
            "need at least one node and one parent".into(),
        ));
    }
    let mut rng = seed::rng(seed);
    let mut edges = Vec::new();
    for i in 0..n_nodes {
        edges.push((i, i));
        let others: Vec<usize> = (0..n_nodes).filter(|&j| j != i).collect();
        let k = rng.random_range(0..max_parents).min(others.len());
        edges.extend(others.choose_multiple(&mut rng, k).map(|&j| (i, j)));
    }
    SparsityPattern::new(n_nodes, edges)
}

/// Example networks with published structure.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Builtin {
    Circle,
    Parallel,
    Winterhalder,
}

impl Builtin {
    pub const ALL: [Builtin; 3] = [Builtin::Circle, Builtin::Parallel, Builtin::Winterhalder];

    pub fn name(self) -> &'static str {
        match self {
            Builtin::Circle => "circle",
            Builtin::Parallel => "parallel",
            Builtin::Winterhalder => "winterhalder",
        }
    }
}

impl std::str::FromStr for Builtin {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Builtin::ALL
            .into_iter()
            .find(|b| b.name() == s.to_ascii_lowercase())
            .ok_or_else(|| Error::InvalidArgument(format!("unknown builtin network `{s}`")))
    }
}

/// A builtin either fixes every coefficient or only the structure.
#[derive(Debug, Clone)]
pub enum BuiltinNetwork {
    Model(MarModel),
    Pattern(SparsityPattern),
}

pub fn builtin_network(which: Builtin) -> BuiltinNetwork {
    match which {
        Builtin::Circle => BuiltinNetwork::Pattern(circle_pattern()),
        Builtin::Parallel => BuiltinNetwork::Model(parallel_network()),
        Builtin::Winterhalder => BuiltinNetwork::Model(winterhalder_network()),
    }
}

/// Four nodes, each driven by itself and its predecessor on a ring.
pub fn circle_pattern() -> SparsityPattern {
    let ring = [(1, 0), (2, 1), (3, 2), (0, 3)];
    SparsityPattern::new(4, (0..4).map(|i| (i, i)).chain(ring)).expect("static pattern")
}

/// Seven nodes, order four. Node 2 drives node 1 through four parallel
/// intermediate nodes; node 7 is isolated apart from its self-connection.
pub fn parallel_network() -> MarModel {
    let (n, p) = (7, 4);
    let mut lags = vec![DMatrix::zeros(n, n); p];
    for a in lags.iter_mut() {
        for i in 0..n {
            a[(i, i)] = 0.05;
        }
        a[(1, 1)] = 0.2;
        for k in 2..6 {
            a[(k, 1)] = 0.15;
            a[(0, k)] = 0.15;
        }
    }
    MarModel::new(lags, DMatrix::identity(n, n)).expect("static model")
}

/// Four-node, order-five benchmark network with single-lag connections.
pub fn winterhalder_network() -> MarModel {
    let triples = [
        (0, 0, 1, 0.8),
        (0, 1, 4, 0.65),
        (1, 1, 1, 0.6),
        (1, 3, 5, 0.6),
        (2, 2, 3, 0.5),
        (2, 0, 1, -0.6),
        (2, 1, 4, 0.4),
        (3, 3, 1, 1.2),
        (3, 3, 2, -0.7),
    ];
    MarModel::from_triples(4, 5, &triples, DMatrix::identity(4, 4)).expect("static model")
}

/// Pre-sample state used by [`simulate`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Init {
    /// Initial `p` samples drawn from the stationary distribution.
    Stationary,
    /// Zero history before the first sample.
    Zero,
    /// Zero history, then discard this many generated samples.
    BurnIn(usize),
}

impl Init {
    pub fn default_burn_in(order: usize) -> Self {
        Init::BurnIn(500 * order)
    }
}

/// Symmetric square root `L` with `L L^T = m` for a PSD matrix, clamping
/// tiny negative eigenvalues from round-off.
pub(crate) fn psd_factor(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = m.clone().symmetric_eigen();
    let sqrt_vals = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&sqrt_vals)
}

/// Simulate `n_samples` steps. Deterministic given `seed`.
pub fn simulate(model: &MarModel, n_samples: usize, seed: u64, init: Init) -> Result<TimeSeries> {
    if n_samples == 0 {
        return Err(Error::InvalidArgument(
            "n_samples must be at least 1".into(),
        ));
    }
    let n = model.n_nodes();
    let p = model.order();
    let mut rng = seed::rng(seed);
    let noise_factor = model
        .noise_cov()
        .clone()
        .cholesky()
        .ok_or_else(|| Error::InvalidModel("noise covariance is not positive definite".into()))?
        .l();

    let draw_noise = |rng: &mut rand_chacha::ChaCha8Rng| -> DVector<f64> {
        let z = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        &noise_factor * z
    };

    // history[0] = x(t-1), ..., history[p-1] = x(t-p)
    let mut history: Vec<DVector<f64>> = vec![DVector::zeros(n); p];
    let mut out = DMatrix::zeros(n_samples, n);
    let mut emitted = 0;
    let mut discard = 0;

    match init {
        Init::Stationary => {
            let stability = is_stable(model, 0.0)?;
            if !stability.stable {
                return Err(Error::Unstable {
                    radius: stability.spectral_radius,
                });
            }
            let gamma = covariance::stationary_covariance(model, CovarianceMethod::auto(model))?;
            let factor = psd_factor(gamma.block_toeplitz());
            let z = DVector::from_fn(n * p, |_, _| rng.sample::<f64, _>(StandardNormal));
            let state = factor * z;
            for (k, h) in history.iter_mut().enumerate() {
                *h = state.rows(k * n, n).into_owned();
            }
            // The state holds x(p-1), ..., x(0); emit it in time order.
            for k in (0..p).rev() {
                if emitted == n_samples {
                    break;
                }
                out.row_mut(emitted).copy_from(&history[k].transpose());
                emitted += 1;
            }
        }
        Init::Zero => {}
        Init::BurnIn(k) => discard = k,
    }

    let mut step = 0usize;
    while emitted < n_samples {
        let mut x = draw_noise(&mut rng);
        for (a, h) in model.lags().iter().zip(&history) {
            x.gemv(1.0, a, h, 1.0);
        }
        if let Some(node) = x.iter().position(|v| !v.is_finite()) {
            return Err(Error::Diverged { sample: step, node });
        }
        history.rotate_right(1);
        history[0] = x;
        if step >= discard {
            out.row_mut(emitted).copy_from(&history[0].transpose());
            emitted += 1;
        }
        step += 1;
    }
    TimeSeries::new(out)
}
