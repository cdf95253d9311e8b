use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::TimeSeries;

/// Column of `(node position, lag)` in a node-major design with `order` lags
/// per block. Lags are 1-based: row `t` of block `X_j` holds
/// `x_j(t-1), ..., x_j(t-p)`.
pub fn design_column(node_pos: usize, lag: usize, order: usize) -> usize {
    node_pos * order + lag - 1
}

/// Regression of `x_i(t)` on the lagged values of every node.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionDesign {
    target: usize,
    order: usize,
    n_nodes: usize,
    x: DMatrix<f64>,
    y: DVector<f64>,
}

impl RegressionDesign {
    pub fn new(target: usize, order: usize, x: DMatrix<f64>, y: DVector<f64>) -> Result<Self> {
        if order == 0 || !x.ncols().is_multiple_of(order) {
            return Err(Error::Dimension(format!(
                "{} columns is not a multiple of order {order}",
                x.ncols()
            )));
        }
        if x.nrows() != y.len() {
            return Err(Error::Dimension(format!(
                "{} design rows vs {} targets",
                x.nrows(),
                y.len()
            )));
        }
        let n_nodes = x.ncols() / order;
        if target >= n_nodes {
            return Err(Error::InvalidArgument(format!(
                "target {target} out of range"
            )));
        }
        Ok(Self {
            target,
            order,
            n_nodes,
            x,
            y,
        })
    }

    pub fn target(&self) -> usize {
        self.target
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn n_rows(&self) -> usize {
        self.y.len()
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn node_of_column(&self, col: usize) -> usize {
        col / self.order
    }

    pub fn lag_of_column(&self, col: usize) -> usize {
        col % self.order + 1
    }

    /// Block `X_j`.
    pub fn block(&self, node: usize) -> DMatrix<f64> {
        self.x.columns(node * self.order, self.order).into_owned()
    }

    /// Keep only the listed rows.
    pub fn select_rows(&self, rows: &[usize]) -> Self {
        let x = self.x.select_rows(rows.iter());
        let y = DVector::from_iterator(rows.len(), rows.iter().map(|&r| self.y[r]));
        Self { x, y, ..*self }
    }
}

/// Toeplitz design from a single realization: `n_samples - order` rows.
pub fn build_design(series: &TimeSeries, target: usize, order: usize) -> Result<RegressionDesign> {
    let n_nodes = series.n_nodes();
    if order == 0 {
        return Err(Error::InvalidArgument("order must be positive".into()));
    }
    if target >= n_nodes {
        return Err(Error::InvalidArgument(format!(
            "target {target} out of range for {n_nodes} nodes"
        )));
    }
    if series.n_samples() <= order {
        return Err(Error::TooShort(format!(
            "{} samples cannot support order {order}",
            series.n_samples()
        )));
    }
    let rows = series.n_samples() - order;
    let x = DMatrix::from_fn(rows, n_nodes * order, |row, col| {
        let (node, lag) = (col / order, col % order + 1);
        series.get(row + order - lag, node)
    });
    let y = DVector::from_fn(rows, |row, _| series.get(row + order, target));
    RegressionDesign::new(target, order, x, y)
}

/// One row per realization, taken from its final sample, so rows are
/// independent when the realizations are.
pub fn build_design_independent(
    realizations: &[TimeSeries],
    target: usize,
    order: usize,
) -> Result<RegressionDesign> {
    let first = realizations
        .first()
        .ok_or_else(|| Error::TooShort("no realizations supplied".into()))?;
    let n_nodes = first.n_nodes();
    if order == 0 || target >= n_nodes {
        return Err(Error::InvalidArgument("bad order or target".into()));
    }
    let mut x = DMatrix::zeros(realizations.len(), n_nodes * order);
    let mut y = DVector::zeros(realizations.len());
    for (row, s) in realizations.iter().enumerate() {
        if s.n_nodes() != n_nodes {
            return Err(Error::Dimension(
                "realizations have different node counts".into(),
            ));
        }
        if s.n_samples() <= order {
            return Err(Error::TooShort(format!(
                "realization {row} has {} samples",
                s.n_samples()
            )));
        }
        let last = s.n_samples() - 1;
        y[row] = s.get(last, target);
        for node in 0..n_nodes {
            for lag in 1..=order {
                x[(row, design_column(node, lag, order))] = s.get(last - lag, node);
            }
        }
    }
    RegressionDesign::new(target, order, x, y)
}
