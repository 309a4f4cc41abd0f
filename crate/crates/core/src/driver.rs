//! Experiment driver: config parsing, the end-to-end verification
//! pipeline (plant abstraction, perception intervals, product, safety
//! bounds), and the CLI commands `generate`, `verify`, and `sweep`.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::abstraction::{
    build_perception_model, compose_closed_loop, partition_equal_count, partition_equal_width,
    AbstractionConfig, AbstractionError, BinRecord, Method, PerceptionDataset, PerceptionModel,
};
use crate::aebs::{
    build_controller_plant_abstraction, generate_dataset, monte_carlo_safety, AebsConfig,
    AebsError, GridSpec, McEstimate, SyntheticPerception,
};
use crate::checker::{reach_interval, CheckerError};
use crate::markov::Imdp;
use crate::stats::{AxisBox, StatsError};

/// Driver errors; each class maps to a fixed process exit code.
#[derive(Error, Debug)]
pub enum DriverError {
    #[error("config error: {0}")]
    Config(String),
    #[error("io error: {0}")]
    Io(String),
    #[error("usage error: {0}")]
    Usage(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("model error: {0}")]
    Model(String),
    #[error("checker error: {0}")]
    Checker(String),
}

impl DriverError {
    pub fn exit_code(&self) -> i32 {
        match self {
            DriverError::Config(_) => 2,
            DriverError::Io(_) => 3,
            DriverError::Usage(_) => 4,
            DriverError::Data(_) => 5,
            DriverError::Model(_) => 6,
            DriverError::Checker(_) => 7,
        }
    }
}

impl From<AbstractionError> for DriverError {
    fn from(e: AbstractionError) -> Self {
        match e {
            AbstractionError::Csv(_) => DriverError::Data(e.to_string()),
            AbstractionError::Stats(StatsError::DegenerateData(_)) => {
                DriverError::Data(e.to_string())
            }
            AbstractionError::TooFewPoints { .. } => DriverError::Data(e.to_string()),
            other => DriverError::Model(other.to_string()),
        }
    }
}

impl From<AebsError> for DriverError {
    fn from(e: AebsError) -> Self {
        DriverError::Model(e.to_string())
    }
}

impl From<CheckerError> for DriverError {
    fn from(e: CheckerError) -> Self {
        DriverError::Checker(e.to_string())
    }
}

/// Full experiment configuration: plant and controller constants, the
/// synthetic detector, the dataset sampling range, and the grid layout.
#[derive(Clone, Debug, PartialEq)]
pub struct DriverConfig {
    pub aebs: AebsConfig,
    pub per: SyntheticPerception,
    pub sample_lo: f64,
    pub sample_hi: f64,
    pub grid_d_width: f64,
    pub grid_v_width: f64,
    /// First speed edge above zero; offsets cells so the initial speed
    /// sits mid-cell.
    pub grid_v_first: f64,
}

impl Default for DriverConfig {
    fn default() -> Self {
        DriverConfig {
            aebs: AebsConfig::default(),
            per: SyntheticPerception::default(),
            sample_lo: 0.0,
            sample_hi: 60.0,
            grid_d_width: 1.0,
            grid_v_width: 1.0,
            grid_v_first: 0.5,
        }
    }
}

impl DriverConfig {
    /// Parse the `key = value` config format (# starts a comment).
    pub fn parse(text: &str) -> Result<DriverConfig, DriverError> {
        let mut cfg = DriverConfig::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| DriverError::Config(format!("line {}: expected key = value", lineno + 1)))?;
            let key = key.trim();
            let v: f64 = value.trim().parse().map_err(|e| {
                DriverError::Config(format!("line {}: bad value for {key}: {e}", lineno + 1))
            })?;
            match key {
                "tau" => cfg.aebs.tau = v,
                "a_max" => cfg.aebs.a_max = v,
                "b1" => cfg.aebs.b1 = v,
                "b2" => cfg.aebs.b2 = v,
                "c1" => cfg.aebs.c1 = v,
                "c2" => cfg.aebs.c2 = v,
                "t_h" => cfg.aebs.t_h = v,
                "t_s" => cfg.aebs.t_s = v,
                "u_fric" => cfg.aebs.u_fric = v,
                "l" => cfg.aebs.l = v,
                "d0" => cfg.aebs.d0 = v,
                "v0" => cfg.aebs.v0 = v,
                "k" => cfg.per.k = v,
                "x0" => cfg.per.x0 = v,
                "sample_lo" => cfg.sample_lo = v,
                "sample_hi" => cfg.sample_hi = v,
                "grid_d_width" => cfg.grid_d_width = v,
                "grid_v_width" => cfg.grid_v_width = v,
                "grid_v_first" => cfg.grid_v_first = v,
                other => {
                    return Err(DriverError::Config(format!("line {}: unknown key {other}", lineno + 1)))
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<DriverConfig, DriverError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| DriverError::Config(format!("{}: {e}", path.display())))?;
        DriverConfig::parse(&text)
    }

    fn validate(&self) -> Result<(), DriverError> {
        let a = &self.aebs;
        let checks = [
            (a.tau > 0.0, "tau must be positive"),
            (0.0 < a.b1 && a.b1 < a.b2, "need 0 < b1 < b2"),
            ((a.b2 - a.a_max).abs() < 1e-12, "b2 must equal a_max"),
            (a.l > 0.0, "l must be positive"),
            (self.sample_lo < self.sample_hi, "need sample_lo < sample_hi"),
            (self.grid_d_width > 0.0 && self.grid_v_width > 0.0, "grid widths must be positive"),
            (
                self.grid_v_first > 0.0 && self.grid_v_first <= self.grid_v_width,
                "need 0 < grid_v_first <= grid_v_width",
            ),
        ];
        for (ok, msg) in checks {
            if !ok {
                return Err(DriverError::Config(msg.into()));
            }
        }
        Ok(())
    }

    /// Grid from the configured widths: distance edges every grid_d_width
    /// from 0 to d0; speed edges at 0, grid_v_first, then grid_v_width
    /// steps until the initial speed is covered.
    pub fn grid(&self) -> GridSpec {
        let mut d_edges = Vec::new();
        let mut d = 0.0;
        while d < self.aebs.d0 - 1e-9 {
            d_edges.push(d);
            d += self.grid_d_width;
        }
        d_edges.push(self.aebs.d0);
        let mut v_edges = vec![0.0, self.grid_v_first];
        let mut v = self.grid_v_first;
        while v < self.aebs.v0 + 1e-9 {
            v += self.grid_v_width;
            v_edges.push(v);
        }
        GridSpec { d_edges, v_edges }
    }

    pub fn perception_bounds(&self) -> AxisBox {
        AxisBox::new(vec![self.sample_lo], vec![self.sample_hi])
    }
}

/// How to partition the perception state space.
#[derive(Clone, Debug, PartialEq)]
pub enum Binning {
    EqualWidth(f64),
    EqualCount(usize),
}

/// Hierarchical seed derivation: one master stream yields a fixed-order
/// seed per purpose, so sub-experiments reproduce independently.
pub fn derive_seeds(master: u64, n: usize) -> Vec<u64> {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    (0..n).map(|_| rng.gen()).collect()
}

/// Everything produced by one end-to-end verification run.
pub struct VerifyOutput {
    pub p_min: f64,
    pub p_max: f64,
    pub model: PerceptionModel,
    pub product: Imdp,
    pub mcpl_states: usize,
    pub iterations: u64,
    pub converged: bool,
    pub warnings: Vec<String>,
}

/// Build the plant abstraction and perception model, compose them, and
/// bound the probability of never colliding.
pub fn verify_safety(
    cfg: &DriverConfig,
    data: &PerceptionDataset,
    method: Method,
    binning: &Binning,
    alpha_mc: f64,
    w_pe: f64,
) -> Result<VerifyOutput, DriverError> {
    let grid = cfg.grid();
    let mcpl = build_controller_plant_abstraction(&grid, &cfg.aebs)?;
    let mut warnings = Vec::new();
    let partition = match binning {
        Binning::EqualWidth(w) => partition_equal_width(&cfg.perception_bounds(), &[*w])?,
        Binning::EqualCount(c) => {
            let (p, w) = partition_equal_count(data, &[*c])?;
            warnings.extend(w);
            p
        }
    };
    let acfg = AbstractionConfig { method, alpha_mc, w_pe, partition };
    let pm = build_perception_model(data, Some(&cfg.per), &acfg)?;
    let product = compose_closed_loop(&mcpl.mdp, &pm, &mcpl.perception_cells())?;
    let reach = reach_interval(&product, "bad");
    if !reach.converged {
        return Err(DriverError::Checker(format!(
            "value iteration did not converge in {} iterations",
            reach.iterations
        )));
    }
    let init = product.initial().0;
    Ok(VerifyOutput {
        p_min: 1.0 - reach.p_max[init],
        p_max: 1.0 - reach.p_min[init],
        model: pm,
        mcpl_states: mcpl.mdp.n_states(),
        product,
        iterations: reach.iterations,
        converged: reach.converged,
        warnings,
    })
}

// --- CLI ----------------------------------------------------------------

#[derive(Parser)]
#[command(name = "perception-imdp", version, about = "Conservative perception-model verification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// Config file (key = value text).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master random seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output file path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Sample a labeled detection dataset from the synthetic detector.
    Generate {
        #[command(flatten)]
        common: CommonArgs,
        /// Number of points to sample.
        #[arg(long, default_value_t = 1000)]
        trials: u64,
    },
    /// Verify closed-loop safety with one abstraction method.
    Verify {
        #[command(flatten)]
        common: CommonArgs,
        /// Dataset CSV (x1,...,xn,z).
        #[arg(long)]
        dataset: PathBuf,
        /// Abstraction method: noCI | GTPer | logRegCI | oursNPE | ours.
        #[arg(long)]
        method: String,
        /// Equal-width perception bins of this width.
        #[arg(long)]
        bin_width: Option<f64>,
        /// Equal-count perception bins, this many.
        #[arg(long)]
        bin_counts: Option<usize>,
        /// Total risk budget split across bins.
        #[arg(long, default_value_t = 0.05)]
        alpha_mc: f64,
        /// Probability-enlargement scale in [0, 1].
        #[arg(long, default_value_t = 1.0)]
        w_pe: f64,
        /// Also write the product IMDP (JSON + textual listing).
        #[arg(long)]
        export_model: Option<PathBuf>,
    },
    /// Sweep bin widths or enlargement scales against one MC baseline.
    Sweep {
        #[command(flatten)]
        common: CommonArgs,
        /// Dataset CSV; generated from the config when omitted.
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Sweep kind: binwidth | enlargement.
        #[arg(long)]
        kind: String,
        /// Comma-separated sweep values.
        #[arg(long)]
        values: String,
        /// Monte Carlo baseline trials.
        #[arg(long, default_value_t = 100_000)]
        trials: u64,
        /// Bin width used by the enlargement sweep.
        #[arg(long, default_value_t = 5.0)]
        bin_width: f64,
        /// Risk budget.
        #[arg(long, default_value_t = 0.05)]
        alpha_mc: f64,
        /// Dataset size when generating the shared dataset.
        #[arg(long, default_value_t = 100_000)]
        dataset_size: u64,
    },
}

fn load_config(path: &Option<PathBuf>) -> Result<DriverConfig, DriverError> {
    match path {
        Some(p) => DriverConfig::load(p),
        None => Ok(DriverConfig::default()),
    }
}

fn write_file(path: &Path, contents: &str) -> Result<(), DriverError> {
    std::fs::write(path, contents)
        .map_err(|e| DriverError::Io(format!("{}: {e}", path.display())))
}

#[derive(Serialize)]
struct VerifyReport {
    method: String,
    alpha_mc: f64,
    w_pe: f64,
    safety_p_min: f64,
    safety_p_max: f64,
    mcpl_states: usize,
    product_states: usize,
    bins: Vec<BinRecord>,
    iterations: u64,
    converged: bool,
    warnings: Vec<String>,
}

fn cmd_generate(common: &CommonArgs, trials: u64) -> Result<(), DriverError> {
    let cfg = load_config(&common.config)?;
    let seeds = derive_seeds(common.seed, 1);
    let data = generate_dataset(&cfg.per, trials as usize, (cfg.sample_lo, cfg.sample_hi), seeds[0]);
    write_file(&common.out, &data.to_csv())?;
    let positive = data.zs.iter().filter(|&&z| z).count();
    let rate = if data.is_empty() { 0.0 } else { positive as f64 / data.len() as f64 };
    println!("wrote {} points (positive rate {:.4}) to {}", data.len(), rate, common.out.display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_verify(
    common: &CommonArgs,
    dataset: &Path,
    method: &str,
    bin_width: Option<f64>,
    bin_counts: Option<usize>,
    alpha_mc: f64,
    w_pe: f64,
    export_model: &Option<PathBuf>,
) -> Result<(), DriverError> {
    let cfg = load_config(&common.config)?;
    let method = Method::parse(method)
        .ok_or_else(|| DriverError::Usage(format!("unknown method {method}")))?;
    if !(0.0..=1.0).contains(&w_pe) {
        return Err(DriverError::Usage(format!("--w-pe {w_pe} outside [0, 1]")));
    }
    if !(0.0 < alpha_mc && alpha_mc < 1.0) {
        return Err(DriverError::Usage(format!("--alpha-mc {alpha_mc} outside (0, 1)")));
    }
    let binning = match (bin_width, bin_counts) {
        (Some(w), None) => Binning::EqualWidth(w),
        (None, Some(c)) => Binning::EqualCount(c),
        _ => {
            return Err(DriverError::Usage(
                "exactly one of --bin-width and --bin-counts is required".into(),
            ))
        }
    };
    let text = std::fs::read_to_string(dataset)
        .map_err(|e| DriverError::Io(format!("{}: {e}", dataset.display())))?;
    let data = PerceptionDataset::from_csv(&text)?;
    let out = verify_safety(&cfg, &data, method, &binning, alpha_mc, w_pe)?;
    let report = VerifyReport {
        method: method.name().to_string(),
        alpha_mc,
        w_pe,
        safety_p_min: out.p_min,
        safety_p_max: out.p_max,
        mcpl_states: out.mcpl_states,
        product_states: out.product.n_states(),
        bins: out.model.bins.clone(),
        iterations: out.iterations,
        converged: out.converged,
        warnings: out.warnings.clone(),
    };
    write_file(&common.out, &serde_json::to_string_pretty(&report).expect("report json"))?;
    if let Some(path) = export_model {
        write_file(path, &out.product.to_json())?;
        write_file(&path.with_extension("txt"), &out.product.to_text())?;
    }
    println!("safety interval [{:.6}, {:.6}] ({method})", out.p_min, out.p_max);
    Ok(())
}

fn parse_values(values: &str) -> Result<(Vec<f64>, bool), DriverError> {
    let mut parsed = Vec::new();
    let mut deduped = false;
    for field in values.split(',') {
        let v: f64 = field
            .trim()
            .parse()
            .map_err(|e| DriverError::Usage(format!("bad sweep value {field}: {e}")))?;
        if parsed.contains(&v) {
            deduped = true;
        } else {
            parsed.push(v);
        }
    }
    if parsed.is_empty() {
        return Err(DriverError::Usage("no sweep values given".into()));
    }
    Ok((parsed, deduped))
}

/// One row of the sweep CSV.
fn sweep_row(
    out: &mut String,
    value: f64,
    method: &str,
    result: Result<(f64, f64), DriverError>,
    mc: &McEstimate,
    runtime_ms: u128,
) -> Result<(), DriverError> {
    match result {
        Ok((p_min, p_max)) => {
            writeln!(
                out,
                "{value},{method},{p_min},{p_max},{},{},{},{runtime_ms}",
                mc.estimate, mc.ci.lo, mc.ci.hi
            )
            .unwrap();
            Ok(())
        }
        Err(e) => {
            // Flush partial results with a failure marker row.
            writeln!(out, "{value},{method},FAILED,FAILED,{},{},{},{runtime_ms}", mc.estimate, mc.ci.lo, mc.ci.hi)
                .unwrap();
            Err(e)
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn cmd_sweep(
    common: &CommonArgs,
    dataset: &Option<PathBuf>,
    kind: &str,
    values: &str,
    trials: u64,
    bin_width: f64,
    alpha_mc: f64,
    dataset_size: u64,
) -> Result<(), DriverError> {
    let cfg = load_config(&common.config)?;
    let (values, deduped) = parse_values(values)?;
    if deduped {
        eprintln!("warning: duplicate sweep values removed");
    }
    let seeds = derive_seeds(common.seed, 2);
    let data = match dataset {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| DriverError::Io(format!("{}: {e}", path.display())))?;
            PerceptionDataset::from_csv(&text)?
        }
        None => generate_dataset(
            &cfg.per,
            dataset_size as usize,
            (cfg.sample_lo, cfg.sample_hi),
            seeds[0],
        ),
    };
    let per = cfg.per;
    let mc = monte_carlo_safety(&cfg.aebs, |d| per.prob_at(d), trials, seeds[1]);

    let mut out = String::from("sweep_value,method,p_min,p_max,mc_est,mc_lo,mc_hi,runtime_ms\n");
    let mut failure: Option<DriverError> = None;
    'sweep: for &value in &values {
        let points: Vec<(Method, Binning, f64)> = match kind {
            "binwidth" => Method::ALL
                .into_iter()
                .map(|m| (m, Binning::EqualWidth(value), 1.0))
                .collect(),
            "enlargement" => vec![(Method::Ours, Binning::EqualWidth(bin_width), value)],
            other => return Err(DriverError::Usage(format!("unknown sweep kind {other}"))),
        };
        for (method, binning, w_pe) in points {
            let start = std::time::Instant::now();
            let result = verify_safety(&cfg, &data, method, &binning, alpha_mc, w_pe)
                .map(|v| (v.p_min, v.p_max));
            let elapsed = start.elapsed().as_millis();
            if let Err(e) = sweep_row(&mut out, value, method.name(), result, &mc, elapsed) {
                failure = Some(e);
                break 'sweep;
            }
        }
    }
    write_file(&common.out, &out)?;
    match failure {
        Some(e) => Err(e),
        None => {
            println!("wrote sweep results to {}", common.out.display());
            Ok(())
        }
    }
}

/// CLI entry point; returns the process exit code.
pub fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // clap handles --help/--version as "errors" with success exit.
            if e.use_stderr() {
                eprint!("{e}");
                return 4;
            }
            print!("{e}");
            return 0;
        }
    };
    let result = match &cli.command {
        Command::Generate { common, trials } => cmd_generate(common, *trials),
        Command::Verify {
            common,
            dataset,
            method,
            bin_width,
            bin_counts,
            alpha_mc,
            w_pe,
            export_model,
        } => cmd_verify(
            common,
            dataset,
            method,
            *bin_width,
            *bin_counts,
            *alpha_mc,
            *w_pe,
            export_model,
        ),
        Command::Sweep {
            common,
            dataset,
            kind,
            values,
            trials,
            bin_width,
            alpha_mc,
            dataset_size,
        } => cmd_sweep(
            common,
            dataset,
            kind,
            values,
            *trials,
            *bin_width,
            *alpha_mc,
            *dataset_size,
        ),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// Methods applicable to a bin-width sweep, in output order.
pub fn sweep_methods() -> BTreeSet<&'static str> {
    Method::ALL.iter().map(|m| m.name()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_roundtrip_and_unknown_key() {
        let cfg = DriverConfig::parse("tau = 0.8\nk = -0.1\n# comment\nsample_hi = 60\n").unwrap();
        assert_eq!(cfg.aebs.tau, 0.8);
        assert_eq!(cfg.per.k, -0.1);
        assert!(DriverConfig::parse("bogus = 1\n").is_err());
        assert!(DriverConfig::parse("tau\n").is_err());
    }

    #[test]
    fn config_validation() {
        assert!(DriverConfig::parse("tau = -1\n").is_err());
        assert!(DriverConfig::parse("b2 = 10\n").is_err()); // b2 != a_max
    }

    #[test]
    fn default_grid_covers_initial_state() {
        let cfg = DriverConfig::default();
        let grid = cfg.grid();
        assert!(grid.cell_index(cfg.aebs.d0, cfg.aebs.v0).is_some());
        assert!(grid.d_edges.contains(&cfg.aebs.l));
    }

    #[test]
    fn seed_derivation_is_stable() {
        assert_eq!(derive_seeds(7, 3), derive_seeds(7, 3));
        assert_ne!(derive_seeds(7, 1), derive_seeds(8, 1));
    }

    #[test]
    fn sweep_value_parsing() {
        let (vals, deduped) = parse_values("1, 2, 2, 5").unwrap();
        assert_eq!(vals, vec![1.0, 2.0, 5.0]);
        assert!(deduped);
        assert!(parse_values("a,b").is_err());
    }

    #[test]
    fn verify_pipeline_brackets_the_analytic_safety() {
        let cfg = DriverConfig::default();
        let data = generate_dataset(&cfg.per, 20_000, (cfg.sample_lo, cfg.sample_hi), 3);
        let out = verify_safety(&cfg, &data, Method::Ours, &Binning::EqualWidth(5.0), 0.05, 1.0)
            .unwrap();
        let truth = cfg.per.prob_at(34.0);
        assert!(out.p_min <= truth && truth <= out.p_max, "[{}, {}]", out.p_min, out.p_max);
        assert!(out.p_min > 0.0 && out.p_max < 1.0);
    }

    #[test]
    fn gtper_interval_contains_truth_tightly() {
        let cfg = DriverConfig::default();
        let data = generate_dataset(&cfg.per, 100, (cfg.sample_lo, cfg.sample_hi), 4);
        let out = verify_safety(&cfg, &data, Method::GtPer, &Binning::EqualWidth(1.0), 0.05, 1.0)
            .unwrap();
        let truth = cfg.per.prob_at(34.0);
        assert!(out.p_min <= truth && truth <= out.p_max);
        assert!(out.p_max - out.p_min < 0.2);
    }
}
