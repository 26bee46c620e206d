//! The `robust-ot` command line: `distance`, `contour`, `train` and `eval`.
//!
//! Exit codes: 0 success, 1 input/output or usage errors, 2 solver
//! non-convergence, 3 training divergence.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ndarray::{array, Array2};
use serde_json::json;

use crate::classifier::{evaluate, sgd_train_with, LossKind, SoftmaxModel, TrainConfig};
use crate::data_io::{
    load_dataset, load_embeddings, load_features, load_grouping, load_label_names, load_labels,
    load_leading_embeddings, make_grouping, save_grouping, Dataset,
};
use crate::error::{Error, Result};
use crate::frank_wolfe::{rot_distance, w22_transport, FwConfig};
use crate::measures::{DiscreteMeasure, FeatureGrouping};
use crate::metric_solvers::MetricSolverConfig;
use crate::rot_loss::{rot_loss, LabelSpace, RotLossConfig};
use crate::sinkhorn::{entropic_ot, SinkhornConfig};

#[derive(Debug, Parser)]
#[command(
    name = "robust-ot",
    version,
    about = "Robust optimal transport distances and classifiers"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Distance between two point clouds with uniform weights.
    Distance(DistanceArgs),
    /// Loss over the 3-label probability simplex, as a CSV grid.
    Contour(ContourArgs),
    /// Train a softmax classifier.
    Train(TrainArgs),
    /// Evaluate a trained classifier.
    Eval(EvalArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FamilyArg {
    Pnorm,
    Kl,
    Ds,
    W22,
}

impl FamilyArg {
    fn name(self) -> &'static str {
        match self {
            FamilyArg::Pnorm => "pnorm",
            FamilyArg::Kl => "kl",
            FamilyArg::Ds => "ds",
            FamilyArg::W22 => "w22",
        }
    }

    /// Metric configuration, or `None` for the Euclidean baseline.
    fn metric(self, k: u32, lambda_m: f64) -> Option<MetricSolverConfig> {
        match self {
            FamilyArg::Pnorm => Some(MetricSolverConfig::pnorm(k)),
            FamilyArg::Kl => Some(MetricSolverConfig::kl(lambda_m)),
            FamilyArg::Ds => Some(MetricSolverConfig::ds(lambda_m)),
            FamilyArg::W22 => None,
        }
    }
}

fn positive(s: &str) -> std::result::Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v > 0.0 && v.is_finite() => Ok(v),
        _ => Err(format!("expected a positive number, got {s:?}")),
    }
}

fn nonnegative(s: &str) -> std::result::Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v >= 0.0 && v.is_finite() => Ok(v),
        _ => Err(format!("expected a nonnegative number, got {s:?}")),
    }
}

fn unit_interval(s: &str) -> std::result::Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if (0.0..1.0).contains(&v) => Ok(v),
        _ => Err(format!("expected a number in [0, 1), got {s:?}")),
    }
}

#[derive(Debug, Args)]
pub struct MetricArgs {
    /// Regularizer family.
    #[arg(long, value_enum, default_value = "pnorm")]
    pub family: FamilyArg,
    /// p-norm order parameter (p = 2k/(2k-1)).
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u32).range(1..))]
    pub k: u32,
    /// Regularization weight of the KL and doubly-stochastic families.
    #[arg(long, default_value_t = 1.0, value_parser = positive)]
    pub lambda_m: f64,
    /// Number of feature groups for the Kronecker-restricted metric.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub r: Option<u64>,
    /// Seed for the feature grouping and the training order.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct DistanceArgs {
    /// Source points (CSV or binary feature matrix).
    #[arg(long)]
    pub src: PathBuf,
    /// Target points.
    #[arg(long)]
    pub tgt: PathBuf,
    #[command(flatten)]
    pub metric: MetricArgs,
    /// Frank–Wolfe iteration cap.
    #[arg(long, default_value_t = 200, value_parser = clap::value_parser!(u64).range(1..))]
    pub fw_iters: u64,
    /// Stop once the Frank–Wolfe gap falls to this value.
    #[arg(long, default_value_t = 1e-6, value_parser = nonnegative)]
    pub gap_tol: f64,
    /// Entropic weight of the linear minimization oracle.
    #[arg(long, default_value_t = 0.2, value_parser = positive)]
    pub lambda_beta: f64,
    /// Sinkhorn sweeps per oracle call.
    #[arg(long, default_value_t = 1000, value_parser = clap::value_parser!(u64).range(1..))]
    pub sinkhorn_iters: u64,
    /// Sinkhorn early-stopping tolerance on the marginal residual.
    #[arg(long, default_value_t = 1e-10, value_parser = nonnegative)]
    pub sinkhorn_tol: f64,
    /// Largest accepted marginal residual of the final plan.
    #[arg(long, default_value_t = 1e-4, value_parser = positive)]
    pub marginal_tol: f64,
    /// Print a single-line JSON object.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct ContourArgs {
    /// Three comma-separated label names A,B,C; C is the true label.
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    pub labels: Vec<String>,
    /// Word-embedding file (`count dim` header, then `token v1 .. v_dim`).
    #[arg(long)]
    pub embeddings: PathBuf,
    #[command(flatten)]
    pub metric: MetricArgs,
    /// Entropic weight of the loss.
    #[arg(long, default_value_t = 0.02, value_parser = positive)]
    pub lambda_gamma: f64,
    /// Entropic weight of the Sinkhorn oracle.
    #[arg(long, default_value_t = 0.2, value_parser = positive)]
    pub lambda_beta: f64,
    /// Sinkhorn sweeps per oracle call.
    #[arg(long, default_value_t = 10, value_parser = clap::value_parser!(u64).range(1..))]
    pub sinkhorn_iters: u64,
    /// Frank–Wolfe iterations per loss evaluation.
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    pub fw_iters: u64,
    /// Grid points per simplex edge.
    #[arg(long, default_value_t = 101, value_parser = clap::value_parser!(u64).range(2..))]
    pub grid_n: u64,
    /// Output CSV with header `x,y,loss`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct LossArgs {
    /// Entropic weight of the loss.
    #[arg(long, default_value_t = 0.02, value_parser = positive)]
    pub lambda_gamma: f64,
    /// Entropic weight of the Sinkhorn oracle.
    #[arg(long, default_value_t = 0.2, value_parser = positive)]
    pub lambda_beta: f64,
    /// Sinkhorn sweeps per oracle call.
    #[arg(long, default_value_t = 10, value_parser = clap::value_parser!(u64).range(1..))]
    pub sinkhorn_iters: u64,
    /// Frank–Wolfe iterations per loss evaluation.
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    pub fw_iters: u64,
    /// Weight of the uniform distribution mixed into targets.
    #[arg(long, default_value_t = 1e-3, value_parser = unit_interval)]
    pub target_smoothing: f64,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Feature matrix (CSV or binary), one instance per row.
    #[arg(long)]
    pub features: PathBuf,
    /// Label file: `instance<TAB>i,j,..` per line, 0-based.
    #[arg(long)]
    pub labels: PathBuf,
    /// Word-embedding file providing one vector per label.
    #[arg(long)]
    pub embeddings: PathBuf,
    /// One label name per line; without it the first L embeddings are used.
    #[arg(long)]
    pub label_names: Option<PathBuf>,
    #[command(flatten)]
    pub metric: MetricArgs,
    #[command(flatten)]
    pub loss: LossArgs,
    /// SGD learning rate.
    #[arg(long, default_value_t = 0.01, value_parser = nonnegative)]
    pub lr: f64,
    #[arg(long, default_value_t = 50, value_parser = clap::value_parser!(u64).range(1..))]
    pub epochs: u64,
    /// Coefficient of the squared Frobenius norm of the weights.
    #[arg(long, default_value_t = 0.0005, value_parser = nonnegative)]
    pub weight_decay: f64,
    /// Model checkpoint to write.
    #[arg(long)]
    pub model_out: PathBuf,
    /// Write the feature grouping used for the metric.
    #[arg(long)]
    pub grouping_out: Option<PathBuf>,
    /// Write per-epoch losses and timings as JSON.
    #[arg(long)]
    pub metrics_json: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Feature matrix (CSV or binary), one instance per row.
    #[arg(long)]
    pub features: PathBuf,
    /// Label file: `instance<TAB>i,j,..` per line, 0-based.
    #[arg(long)]
    pub labels: PathBuf,
    /// One label name per line; must match the model's label count.
    #[arg(long)]
    pub label_names: Option<PathBuf>,
    /// Model checkpoint written by `train`.
    #[arg(long)]
    pub model_in: PathBuf,
    /// Grouping written at training time; the file is validated.
    #[arg(long)]
    pub grouping_in: Option<PathBuf>,
    /// Write `auc`, `map` and `instances` as JSON.
    #[arg(long)]
    pub metrics_json: Option<PathBuf>,
}

/// Parses `args` (program name first), runs the command and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let outcome = match cli.command {
        Command::Distance(a) => cmd_distance(&a),
        Command::Contour(a) => cmd_contour(&a).map(|_| 0),
        Command::Train(a) => cmd_train(&a).map(|_| 0),
        Command::Eval(a) => cmd_eval(&a).map(|_| 0),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

/// Exit code for an error.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::NotConverged { .. } => 2,
        Error::Diverged { .. } => 3,
        _ => 1,
    }
}

fn grouping_for(dim: usize, metric: &MetricArgs) -> Result<Option<FeatureGrouping>> {
    metric
        .r
        .map(|r| make_grouping(dim, r as usize, metric.seed))
        .transpose()
}

fn write_file(path: &Path, body: &str) -> Result<()> {
    fs::write(path, body).map_err(|e| Error::io(path, e))
}

/// Runs `distance`; returns 0, or 2 when the final plan misses its marginals.
pub fn cmd_distance(args: &DistanceArgs) -> Result<i32> {
    let src = DiscreteMeasure::uniform(load_features(&args.src)?)?;
    let tgt = DiscreteMeasure::uniform(load_features(&args.tgt)?)?;
    if src.dim() != tgt.dim() {
        return Err(Error::DimensionMismatch {
            context: "source vs target dimension",
            expected: src.dim(),
            found: tgt.dim(),
        });
    }
    let sinkhorn = SinkhornConfig::new(args.lambda_beta, args.sinkhorn_iters as usize).with_tol(args.sinkhorn_tol);
    let family = args.metric.family;
    let (value, gap, iterations, residual) = match family.metric(args.metric.k, args.metric.lambda_m) {
        None => {
            let (value, out) = w22_transport(&src, &tgt, &sinkhorn)?;
            (value, None, out.iterations, out.residual)
        }
        Some(metric) => {
            let cfg = FwConfig {
                max_iter: args.fw_iters as usize,
                gap_tol: args.gap_tol,
                sinkhorn,
                metric,
                grouping: grouping_for(src.dim(), &args.metric)?,
                ..FwConfig::default()
            };
            let out = rot_distance(&src, &tgt, &cfg)?;
            let residual = out.plan.marginal_residual(src.weights(), tgt.weights());
            (out.value, Some(out.final_gap()), out.iterations_used, residual)
        }
    };
    let converged = residual <= args.marginal_tol;
    let warning = (!converged).then(|| {
        format!(
            "plan marginal residual {residual:.3e} exceeds {:.1e}; increase --sinkhorn-iters or --lambda-beta",
            args.marginal_tol
        )
    });
    if args.json {
        let mut obj = json!({
            "value": value,
            "gap": gap,
            "iterations": iterations,
            "family": family.name(),
        });
        if let Some(w) = &warning {
            obj["warning"] = json!(w);
        }
        println!("{obj}");
    } else {
        println!("family: {}", family.name());
        println!("value: {value:.10}");
        println!("iterations: {iterations}");
        match gap {
            Some(g) => println!("gap: {g:.3e}"),
            None => println!("gap: n/a"),
        }
        if let Some(w) = &warning {
            println!("warning: {w}");
        }
    }
    Ok(if converged { 0 } else { 2 })
}

/// Loss grid over `h = (x, y, 1 − x − y)` with target `e_C`, normalized to max 1.
///
/// The reported loss is the transport part `f(γ*)` of the objective, so the
/// true-label corner is exactly zero.
pub fn contour_grid(
    labels: &LabelSpace,
    family: FamilyArg,
    metric: Option<&RotLossConfig>,
    sinkhorn: &SinkhornConfig,
    grid_n: usize,
) -> Result<Vec<(f64, f64, f64)>> {
    if labels.len() != 3 {
        return Err(Error::InvalidParameter(format!(
            "contour needs exactly 3 labels, got {}",
            labels.len()
        )));
    }
    let target = array![0.0, 0.0, 1.0];
    let sq = labels.squared_distances();
    let step = 1.0 / (grid_n - 1) as f64;
    let mut rows = Vec::new();
    for i in 0..grid_n {
        for j in 0..grid_n - i {
            let (x, y) = (i as f64 * step, j as f64 * step);
            let z = (1.0 - x - y).max(0.0);
            let total = x + y + z;
            let h = array![x / total, y / total, z / total];
            let loss = match (family, metric) {
                (FamilyArg::W22, _) | (_, None) => {
                    let out = entropic_ot(sq.view(), h.view(), target.view(), sinkhorn)?;
                    out.plan.cost(sq.view())
                }
                (_, Some(cfg)) => rot_loss(h.view(), target.view(), labels, cfg)?.transport_cost,
            };
            rows.push((x, y, loss));
        }
    }
    let max = rows.iter().map(|r| r.2).fold(f64::NEG_INFINITY, f64::max);
    if !(max > 0.0) || !max.is_finite() {
        return Err(Error::InvalidParameter(
            "loss is zero over the whole grid; embeddings coincide".into(),
        ));
    }
    for r in &mut rows {
        r.2 /= max;
    }
    Ok(rows)
}

pub fn cmd_contour(args: &ContourArgs) -> Result<()> {
    if args.labels.len() != 3 {
        return Err(Error::InvalidParameter(format!(
            "--labels needs exactly 3 names, got {}",
            args.labels.len()
        )));
    }
    let emb = load_embeddings(&args.embeddings, &args.labels)?;
    let grouping = grouping_for(emb.ncols(), &args.metric)?;
    let labels = LabelSpace::new(emb, grouping)?;
    let sinkhorn = SinkhornConfig::new(args.lambda_beta, args.sinkhorn_iters as usize);
    let loss_cfg = args
        .metric
        .family
        .metric(args.metric.k, args.metric.lambda_m)
        .map(|metric| RotLossConfig {
            metric,
            lambda_gamma: args.lambda_gamma,
            fw_iters: args.fw_iters as usize,
            sinkhorn,
            target_smoothing_alpha: 0.0,
        });
    let w22_sinkhorn = SinkhornConfig::new(args.lambda_gamma, args.sinkhorn_iters as usize);
    let rows = contour_grid(
        &labels,
        args.metric.family,
        loss_cfg.as_ref(),
        &w22_sinkhorn,
        args.grid_n as usize,
    )?;
    let mut body = String::from("x,y,loss\n");
    for (x, y, l) in rows {
        body.push_str(&format!("{x},{y},{l}\n"));
    }
    write_file(&args.out, &body)
}

fn train_loss(metric: &MetricArgs, loss: &LossArgs) -> LossKind {
    let sinkhorn = SinkhornConfig::new(loss.lambda_beta, loss.sinkhorn_iters as usize);
    match metric.family.metric(metric.k, metric.lambda_m) {
        None => LossKind::W22 {
            lambda_gamma: loss.lambda_gamma,
            sinkhorn,
            target_smoothing_alpha: loss.target_smoothing,
        },
        Some(m) => LossKind::Rot(RotLossConfig {
            metric: m,
            lambda_gamma: loss.lambda_gamma,
            fw_iters: loss.fw_iters as usize,
            sinkhorn,
            target_smoothing_alpha: loss.target_smoothing,
        }),
    }
}

fn load_train_data(args: &TrainArgs) -> Result<(Dataset, Array2<f64>)> {
    match &args.label_names {
        Some(p) => {
            let names = load_label_names(p)?;
            let emb = load_embeddings(&args.embeddings, &names)?;
            Ok((load_dataset(&args.features, &args.labels, Some(names))?, emb))
        }
        None => {
            let features = load_features(&args.features)?;
            let (sets, count) = load_labels(&args.labels, features.nrows(), None)?;
            let (names, emb) = load_leading_embeddings(&args.embeddings, count)?;
            Ok((Dataset::new(features, sets, names)?, emb))
        }
    }
}

pub fn cmd_train(args: &TrainArgs) -> Result<()> {
    let (dataset, emb) = load_train_data(args)?;
    let grouping = grouping_for(emb.ncols(), &args.metric)?;
    if let Some(path) = &args.grouping_out {
        let g = match &grouping {
            Some(g) => g.clone(),
            None => FeatureGrouping::identity(emb.ncols())?,
        };
        save_grouping(path, &g)?;
    }
    let labels = LabelSpace::new(emb, grouping)?;
    let cfg = TrainConfig {
        learning_rate: args.lr,
        epochs: args.epochs as usize,
        weight_decay: args.weight_decay,
        seed: args.metric.seed,
        loss: train_loss(&args.metric, &args.loss),
        shuffle: true,
    };
    let start = Instant::now();
    let mut stdout = std::io::stdout();
    let report = sgd_train_with(&dataset, &cfg, &labels, |s| {
        let _ = writeln!(
            stdout,
            "epoch {:>4}  loss {:.6}  time {:.3}s",
            s.epoch, s.mean_loss, s.seconds
        );
    })?;
    report.model.save(&args.model_out)?;
    println!(
        "trained {} epochs in {:.3}s; model written to {}",
        report.epochs.len(),
        start.elapsed().as_secs_f64(),
        args.model_out.display()
    );
    if let Some(path) = &args.metrics_json {
        let obj = json!({
            "family": args.metric.family.name(),
            "epochs": report.epochs.len(),
            "epoch_loss": report.epochs.iter().map(|s| s.mean_loss).collect::<Vec<_>>(),
            "epoch_seconds": report.epochs.iter().map(|s| s.seconds).collect::<Vec<_>>(),
        });
        write_file(path, &format!("{obj}\n"))?;
    }
    Ok(())
}

pub fn cmd_eval(args: &EvalArgs) -> Result<()> {
    let model = SoftmaxModel::load(&args.model_in)?;
    let features = load_features(&args.features)?;
    if features.ncols() != model.feature_dim() {
        return Err(Error::DimensionMismatch {
            context: "dataset features vs model",
            expected: model.feature_dim(),
            found: features.ncols(),
        });
    }
    let names = match &args.label_names {
        Some(p) => load_label_names(p)?,
        None => (0..model.label_count()).map(|p| p.to_string()).collect(),
    };
    if names.len() != model.label_count() {
        return Err(Error::DimensionMismatch {
            context: "label names vs model",
            expected: model.label_count(),
            found: names.len(),
        });
    }
    if let Some(path) = &args.grouping_in {
        load_grouping(path)?;
    }
    let (sets, _) = load_labels(&args.labels, features.nrows(), Some(names.len()))?;
    let dataset = Dataset::new(features, sets, names)?;
    let metrics = evaluate(&model, &dataset)?;
    println!("auc: {:.6}", metrics.auc);
    println!("map: {:.6}", metrics.map);
    if let Some(path) = &args.metrics_json {
        let obj = json!({ "auc": metrics.auc, "map": metrics.map, "instances": dataset.len() });
        write_file(path, &format!("{obj}\n"))?;
    }
    Ok(())
}
