//! Subcommand options and pipelines.

use std::path::{Path, PathBuf};

use clap::Args;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use smartnet::covariance::{lyapunov_residual, stationary_covariance, CovarianceMethod};
use smartnet::estimators::{EdgeEstimator, Registry, Ridge};
use smartnet::evaluation::{cross_validate, recovery_trial, roc as roc_curves, CvOptions};
use smartnet::fcs::{audit_assumptions, fcs_report_with};
use smartnet::io::{
    fcs_table_csv, read_model, read_series, series_to_csv, write_atomic, FcsDocument, ModelDocument,
};
use smartnet::model::{
    builtin_network, draw_random_model, is_stable, simulate as simulate_model, Builtin,
    BuiltinNetwork, Init, MarModel, TimeSeries, DEFAULT_MAX_ATTEMPTS,
};
use smartnet::nalgebra::DMatrix;
use smartnet::solver::{
    build_design, GroupLassoSolution, GroupLayout, LambdaGrid, Problem, SolverConfig,
};
use smartnet::Variant;

use crate::CliError;

type CmdResult = Result<(), CliError>;

fn required<T: Clone>(v: &Option<T>, flag: &str) -> Result<T, CliError> {
    v.clone()
        .ok_or_else(|| CliError::usage(format!("missing required option --{flag}")))
}

fn parse<T: std::str::FromStr<Err = smartnet::Error>>(s: &str) -> Result<T, CliError> {
    Ok(s.parse::<T>()?)
}

fn envelope(command: &str, config: &impl Serialize, result: Value) -> Result<String, CliError> {
    let doc = json!({
        "tool": "smartnet",
        "version": env!("CARGO_PKG_VERSION"),
        "command": command,
        "config": config,
        "result": result,
    });
    Ok(serde_json::to_string_pretty(&doc)? + "\n")
}

fn emit(out: Option<&Path>, text: &str) -> CmdResult {
    match out {
        Some(p) => write_atomic(p, text.as_bytes())?,
        None => print!("{text}"),
    }
    Ok(())
}

fn covariance_method(
    name: &Option<String>,
    model: &MarModel,
) -> Result<CovarianceMethod, CliError> {
    match name.as_deref() {
        None | Some("auto") => Ok(CovarianceMethod::auto(model)),
        Some(s) => parse(s),
    }
}

fn grid(lo_frac: f64, n_points: usize) -> Result<LambdaGrid, CliError> {
    if !(lo_frac > 0.0 && lo_frac <= 1.0) || n_points == 0 {
        return Err(CliError::usage(
            "need 0 < --lo-frac <= 1 and --n-points >= 1",
        ));
    }
    Ok(LambdaGrid::Relative { lo_frac, n_points })
}

fn edge_list(edges: impl IntoIterator<Item = (usize, usize)>) -> Value {
    Value::Array(
        edges
            .into_iter()
            .map(|(i, j)| json!({ "from": j + 1, "to": i + 1 }))
            .collect(),
    )
}

// ---------------------------------------------------------------- fcs

#[derive(Args, Serialize, Deserialize, Default, Clone)]
#[serde(default, deny_unknown_fields)]
pub struct FcsArgs {
    /// Model file (JSON).
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Score the unit-power normalized model.
    #[arg(long, num_args = 0..=1, default_missing_value = "true", require_equals = true)]
    pub normalize: Option<bool>,
    /// Emit a two-decimal CSV table instead of the JSON report.
    #[arg(long, num_args = 0..=1, default_missing_value = "true", require_equals = true)]
    pub table: Option<bool>,
    /// Covariance solver: auto, kronecker, fixed_point or doubling.
    #[arg(long)]
    pub method: Option<String>,
    /// Output file (default stdout).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn fcs(mut a: FcsArgs) -> CmdResult {
    let model = read_model(&required(&a.model, "model")?)?;
    let normalize = *a.normalize.get_or_insert(false);
    let table = *a.table.get_or_insert(false);
    let method = covariance_method(&a.method, &model)?;
    a.method.get_or_insert_with(|| "auto".into());
    let report = fcs_report_with(&model, normalize, method)?;
    let text = if table {
        fcs_table_csv(&report)
    } else {
        envelope("fcs", &a, serde_json::to_value(FcsDocument::from(&report))?)?
    };
    emit(a.out.as_deref(), &text)
}

// ---------------------------------------------------------------- audit

#[derive(Args, Serialize, Deserialize, Default, Clone)]
#[serde(default, deny_unknown_fields)]
pub struct AuditArgs {
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Covariance solver: auto, kronecker, fixed_point or doubling.
    #[arg(long)]
    pub method: Option<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn audit(mut a: AuditArgs) -> CmdResult {
    let model = read_model(&required(&a.model, "model")?)?;
    let method = covariance_method(&a.method, &model)?;
    a.method.get_or_insert_with(|| "auto".into());
    let stability = is_stable(&model, 0.0)?;
    let gamma = stationary_covariance(&model, method)?;
    let residual = lyapunov_residual(&model, &gamma);
    // independent cross-check with the iterative solver
    let check = stationary_covariance(&model, CovarianceMethod::FixedPoint)?;
    let gap = (gamma.block_toeplitz() - check.block_toeplitz()).norm()
        / gamma.block_toeplitz().norm().max(1e-300);
    let audit = audit_assumptions(&model, &gamma, None)?;
    let result = json!({
        "spectral_radius": stability.spectral_radius,
        "covariance": {
            "method": format!("{method:?}").to_lowercase(),
            "lyapunov_residual": residual,
            "fixed_point_relative_gap": gap,
            "node_powers": gamma.node_powers(),
        },
        "assumptions": audit,
    });
    emit(a.out.as_deref(), &envelope("audit", &a, result)?)
}

// ---------------------------------------------------------------- simulate

#[derive(Args, Serialize, Deserialize, Default, Clone)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateArgs {
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Number of samples [default: 150].
    #[arg(long)]
    pub n: Option<usize>,
    /// Random seed [default: 0].
    #[arg(long)]
    pub seed: Option<u64>,
    /// stationary, zero, burnin (500 p samples) or burnin:K [default: stationary].
    #[arg(long)]
    pub init: Option<String>,
    /// Output CSV (default stdout).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn parse_init(s: &str, order: usize) -> Result<Init, CliError> {
    match s {
        "stationary" => Ok(Init::Stationary),
        "zero" => Ok(Init::Zero),
        "burnin" => Ok(Init::default_burn_in(order)),
        other => other
            .strip_prefix("burnin:")
            .and_then(|k| k.parse().ok())
            .map(Init::BurnIn)
            .ok_or_else(|| CliError::usage(format!("unknown --init `{other}`"))),
    }
}

pub fn simulate(mut a: SimulateArgs) -> CmdResult {
    let model = read_model(&required(&a.model, "model")?)?;
    let n = *a.n.get_or_insert(150);
    let seed = *a.seed.get_or_insert(0);
    let init = parse_init(
        a.init.get_or_insert_with(|| "stationary".into()),
        model.order(),
    )?;
    let series = simulate_model(&model, n, seed, init)?;
    emit(a.out.as_deref(), &series_to_csv(&series))
}

// ---------------------------------------------------------------- fit

#[derive(Args, Serialize, Deserialize, Default, Clone)]
#[serde(default, deny_unknown_fields)]
pub struct FitArgs {
    /// Time series CSV.
    #[arg(long)]
    pub series: Option<PathBuf>,
    /// Model order p.
    #[arg(long)]
    pub order: Option<usize>,
    /// sg or scsg [default: scsg].
    #[arg(long)]
    pub variant: Option<String>,
    /// Single penalty applied to every node.
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Solve along a per-node path from lambda_max down.
    #[arg(long, num_args = 0..=1, default_missing_value = "true", require_equals = true)]
    pub path: Option<bool>,
    /// Smallest path penalty as a fraction of lambda_max [default: 0.05].
    #[arg(long)]
    pub lo_frac: Option<f64>,
    /// Path length [default: 50].
    #[arg(long)]
    pub n_points: Option<usize>,
    /// Report KKT certificates (also printed to stderr).
    #[arg(long, num_args = 0..=1, default_missing_value = "true", require_equals = true)]
    pub kkt: Option<bool>,
    /// Scale every node to unit sample power before fitting.
    #[arg(long, num_args = 0..=1, default_missing_value = "true", require_equals = true)]
    pub normalize: Option<bool>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn load_series(path: &Option<PathBuf>, normalize: bool) -> Result<TimeSeries, CliError> {
    let s = read_series(&required(path, "series")?)?;
    Ok(if normalize { s.normalized()? } else { s })
}

fn solution_json(sol: &GroupLassoSolution, order: usize, kkt: bool) -> Value {
    let mut coefficients = Vec::new();
    for g in sol.active_groups() {
        let grp = &sol.layout.groups[g];
        let values: Vec<f64> = sol.coeffs.rows_range(grp.range()).iter().copied().collect();
        if grp.len == order {
            coefficients.push(json!({ "from": grp.node + 1, "lags": values }));
        } else {
            let lag = grp.start % order + 1;
            coefficients.push(json!({ "from": grp.node + 1, "lag": lag, "value": values[0] }));
        }
    }
    let mut v = json!({
        "lambda": sol.lambda,
        "parents": sol.active_nodes().iter().map(|j| j + 1).collect::<Vec<_>>(),
        "coefficients": coefficients,
        "objective": sol.objective,
        "iterations": sol.iterations,
        "converged": sol.converged,
    });
    if kkt {
        v["kkt_residual"] = json!(sol.kkt_residual);
    }
    v
}

pub fn fit(mut a: FitArgs) -> CmdResult {
    let normalize = *a.normalize.get_or_insert(false);
    let series = load_series(&a.series, normalize)?;
    let order = required(&a.order, "order")?;
    let variant: Variant = parse(a.variant.get_or_insert_with(|| "scsg".into()))?;
    let path = *a.path.get_or_insert(false);
    let kkt = *a.kkt.get_or_insert(false);
    if path == a.lambda.is_some() {
        return Err(CliError::usage("give exactly one of --lambda or --path"));
    }
    let path_grid = if path {
        Some(grid(
            *a.lo_frac.get_or_insert(0.05),
            *a.n_points.get_or_insert(50),
        )?)
    } else {
        None
    };
    let config = SolverConfig::default();
    let fits = (0..series.n_nodes())
        .into_par_iter()
        .map(|i| -> Result<(f64, Vec<GroupLassoSolution>), CliError> {
            let design = build_design(&series, i, order)?;
            let problem = Problem::new(&design, GroupLayout::for_variant(&design, variant));
            let lmax = problem.lambda_max()?;
            let sols = match (&path_grid, a.lambda) {
                (Some(g), _) => problem.path(g, &config)?,
                (None, Some(l)) => vec![problem.solve(l, &config, None)?],
                _ => unreachable!(),
            };
            Ok((lmax, sols))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let mut nodes = Vec::new();
    let mut edges = Vec::new();
    for (i, (lmax, sols)) in fits.iter().enumerate() {
        if kkt {
            for s in sols {
                eprintln!(
                    "node {} lambda {:.6e} kkt_residual {:.3e}",
                    i + 1,
                    s.lambda,
                    s.kkt_residual
                );
            }
        }
        if !path {
            edges.extend(sols[0].active_nodes().into_iter().map(|j| (i, j)));
        }
        nodes.push(json!({
            "node": i + 1,
            "lambda_max": lmax,
            "solutions": sols.iter().map(|s| solution_json(s, order, kkt)).collect::<Vec<_>>(),
        }));
    }
    let mut result = json!({ "variant": variant, "nodes": nodes });
    if !path {
        result["edges"] = edge_list(edges);
    }
    emit(a.out.as_deref(), &envelope("fit", &a, result)?)
}

// ---------------------------------------------------------------- cv

#[derive(Args, Serialize, Deserialize, Default, Clone)]
#[serde(default, deny_unknown_fields)]
pub struct CvArgs {
    #[arg(long)]
    pub series: Option<PathBuf>,
    #[arg(long)]
    pub order: Option<usize>,
    /// sg or scsg [default: scsg].
    #[arg(long)]
    pub variant: Option<String>,
    /// Number of contiguous folds [default: 10].
    #[arg(long)]
    pub folds: Option<usize>,
    /// [default: 0.05]
    #[arg(long)]
    pub lo_frac: Option<f64>,
    /// [default: 50]
    #[arg(long)]
    pub n_points: Option<usize>,
    /// Only this node (1-based); default all nodes.
    #[arg(long)]
    pub node: Option<usize>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true", require_equals = true)]
    pub normalize: Option<bool>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn cv(mut a: CvArgs) -> CmdResult {
    let normalize = *a.normalize.get_or_insert(false);
    let series = load_series(&a.series, normalize)?;
    let order = required(&a.order, "order")?;
    let variant: Variant = parse(a.variant.get_or_insert_with(|| "scsg".into()))?;
    let opts = CvOptions {
        folds: *a.folds.get_or_insert(10),
        grid: grid(
            *a.lo_frac.get_or_insert(0.05),
            *a.n_points.get_or_insert(50),
        )?,
        solver: SolverConfig::default(),
    };
    let nodes: Vec<usize> = match a.node {
        Some(k) if k >= 1 && k <= series.n_nodes() => vec![k - 1],
        Some(k) => {
            return Err(CliError::usage(format!(
                "--node {k} outside 1..={}",
                series.n_nodes()
            )))
        }
        None => (0..series.n_nodes()).collect(),
    };
    let results = nodes
        .par_iter()
        .map(|&i| -> Result<(Value, Vec<(usize, usize)>), CliError> {
            let r = cross_validate(&series, i, order, variant, &opts)?;
            let design = build_design(&series, i, order)?;
            let sol = Problem::new(&design, GroupLayout::for_variant(&design, variant)).solve(
                r.selected_lambda,
                &opts.solver,
                None,
            )?;
            let edges: Vec<_> = sol.active_nodes().into_iter().map(|j| (i, j)).collect();
            let mut v = serde_json::to_value(&r)?;
            v["target"] = json!(i + 1);
            v["parents"] = json!(edges.iter().map(|e| e.1 + 1).collect::<Vec<_>>());
            Ok((v, edges))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let edges: Vec<_> = results.iter().flat_map(|r| r.1.clone()).collect();
    let result = json!({
        "variant": variant,
        "nodes": results.into_iter().map(|r| r.0).collect::<Vec<_>>(),
        "edges": edge_list(edges),
    });
    emit(a.out.as_deref(), &envelope("cv", &a, result)?)
}

// ---------------------------------------------------------------- trials

#[derive(Args, Serialize, Deserialize, Default, Clone)]
#[serde(default, deny_unknown_fields)]
pub struct TrialsArgs {
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Samples per trial [default: 150].
    #[arg(long)]
    pub n: Option<usize>,
    /// [default: 30]
    #[arg(long)]
    pub trials: Option<usize>,
    /// sg or scsg [default: scsg].
    #[arg(long)]
    pub variant: Option<String>,
    /// Master seed; trial k uses derive(seed, [k]) [default: 0].
    #[arg(long)]
    pub seed: Option<u64>,
    /// [default: 10]
    #[arg(long)]
    pub folds: Option<usize>,
    /// [default: 0.05]
    #[arg(long)]
    pub lo_frac: Option<f64>,
    /// [default: 50]
    #[arg(long)]
    pub n_points: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn trials(mut a: TrialsArgs) -> CmdResult {
    let model = read_model(&required(&a.model, "model")?)?;
    let n = *a.n.get_or_insert(150);
    let n_trials = *a.trials.get_or_insert(30);
    let variant: Variant = parse(a.variant.get_or_insert_with(|| "scsg".into()))?;
    let seed = *a.seed.get_or_insert(0);
    if n_trials == 0 {
        return Err(CliError::usage("--trials must be positive"));
    }
    let opts = CvOptions {
        folds: *a.folds.get_or_insert(10),
        grid: grid(
            *a.lo_frac.get_or_insert(0.05),
            *a.n_points.get_or_insert(50),
        )?,
        solver: SolverConfig::default(),
    };
    let tally = recovery_trial(&model, n, n_trials, variant, seed, &opts)?;
    let rate = |&(i, j): &(usize, usize)| json!({ "from": j + 1, "to": i + 1, "count": tally.count(i, j), "rate": tally.rate(i, j) });
    let result = json!({
        "variant": variant,
        "exact_recoveries": tally.exact_recoveries(),
        "true_edges": tally.true_edges.iter().map(rate).collect::<Vec<_>>(),
        "false_edges": tally.false_edges().iter().map(|(e, _)| rate(e)).collect::<Vec<_>>(),
        "trials": tally.trials.iter().map(|t| json!({
            "trial": t.trial,
            "seed": t.seed,
            "exact": t.exact,
            "edges": edge_list(t.edges.iter().copied()),
            "selected_lambdas": t.selected_lambdas,
        })).collect::<Vec<_>>(),
    });
    emit(a.out.as_deref(), &envelope("trials", &a, result)?)
}

// ---------------------------------------------------------------- roc

#[derive(Args, Serialize, Deserialize, Default, Clone)]
#[serde(default, deny_unknown_fields)]
pub struct RocArgs {
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// [default: 300]
    #[arg(long)]
    pub n: Option<usize>,
    /// Comma-separated estimator names [default: scsg,lasso,ls,ridge,mb].
    #[arg(long)]
    pub estimators: Option<String>,
    /// [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Ridge penalty rho [default: 1e-3].
    #[arg(long)]
    pub ridge_penalty: Option<f64>,
    /// Output CSV (estimator,threshold,fpr,tpr,auc); default stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write a JSON report with the resolved config and AUCs.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

pub fn roc(mut a: RocArgs) -> CmdResult {
    let model = read_model(&required(&a.model, "model")?)?;
    let n = *a.n.get_or_insert(300);
    let seed = *a.seed.get_or_insert(0);
    let names_text = a
        .estimators
        .get_or_insert_with(|| "scsg,lasso,ls,ridge,mb".into())
        .clone();
    let rho = *a
        .ridge_penalty
        .get_or_insert(smartnet::estimators::DEFAULT_RIDGE_PENALTY);
    let mut registry = Registry::with_defaults();
    registry.register(Box::new(Ridge {
        penalty: rho,
        aggregation: Default::default(),
    }));
    let names: Vec<&str> = names_text
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .collect();
    if names.is_empty() {
        return Err(CliError::usage("--estimators is empty"));
    }
    let selected: Vec<&dyn EdgeEstimator> = registry.select(&names)?;
    let curves = roc_curves(&model, n, &selected, seed)?;
    let mut csv = String::from("estimator,threshold,fpr,tpr,auc\n");
    for name in &names {
        let c = &curves[*name];
        for p in &c.points {
            csv.push_str(&format!(
                "{name},{:?},{:?},{:?},{:?}\n",
                p.threshold, p.fpr, p.tpr, c.auc
            ));
        }
    }
    emit(a.out.as_deref(), &csv)?;
    if let Some(path) = a.report.clone() {
        let aucs: serde_json::Map<String, Value> = names
            .iter()
            .map(|n| (n.to_string(), json!(curves[*n].auc)))
            .collect();
        write_atomic(
            &path,
            envelope("roc", &a, json!({ "auc": aucs }))?.as_bytes(),
        )?;
    }
    Ok(())
}

// ---------------------------------------------------------------- builtin

#[derive(Args, Serialize, Deserialize, Default, Clone)]
#[serde(default, deny_unknown_fields)]
pub struct BuiltinArgs {
    /// circle, parallel or winterhalder.
    pub name: Option<String>,
    /// Seed for the circle network's coefficient draw [default: 0].
    #[arg(long)]
    pub seed: Option<u64>,
    /// Coefficient standard deviation for the circle draw [default: 0.2].
    #[arg(long)]
    pub coeff_std: Option<f64>,
    /// Order for the circle draw [default: 4].
    #[arg(long)]
    pub order: Option<usize>,
    /// Output model file (default stdout).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn builtin(mut a: BuiltinArgs) -> CmdResult {
    let which: Builtin = parse(&required(&a.name, "name (positional NAME)")?)?;
    let model = match builtin_network(which) {
        BuiltinNetwork::Model(m) => m,
        BuiltinNetwork::Pattern(p) => {
            let seed = *a.seed.get_or_insert(0);
            let std = *a.coeff_std.get_or_insert(0.2);
            let order = *a.order.get_or_insert(4);
            let n = p.n_nodes();
            draw_random_model(
                &p,
                order,
                std,
                DMatrix::identity(n, n),
                seed,
                DEFAULT_MAX_ATTEMPTS,
            )?
        }
    };
    let text = serde_json::to_string_pretty(&ModelDocument::from_model(&model))? + "\n";
    emit(a.out.as_deref(), &text)
}
