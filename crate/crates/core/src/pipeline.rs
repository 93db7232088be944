//! Run configuration and the subcommands of the `quasipot` binary. Every
//! subcommand writes its artifacts and a provenance snapshot (configuration
//! plus tool version) into a run directory.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{LearnedField, PotentialField};
use crate::mc::{compare_with_formula, exit_time_stats, Comparison, ExitRegion, ExitTimeStats, McParams, McSetup};
use crate::net::{load_checkpoint, Architecture};
use crate::path::{
    divergence_integral, exit_point_on_boundary, integrate_mpp, path_csv, saddle_seed, Baseline, ExitPoint,
    LineSegment, PathOptions, PathResult, PathStatus, SaddleSeed,
};
use crate::prefactor::{met_csv, prefactor_case_a, prefactor_case_b, Case, PrefactorReport, PrefactorSettings};
use crate::systems::{distance, FixedKind, FixedPoint, Registered, SystemRegistry, BENCHMARK_KEY};
use crate::train::{
    approximation_errors, approximation_errors_at, sample_training_set, train_with, EpochRecord, ErrorMetrics, Grid,
    TrainConfig, TrainOptions,
};

pub const TOOL_NAME: &str = env!("CARGO_PKG_NAME");
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");
/// Environment variable naming the default output root.
pub const OUTPUT_ROOT_ENV: &str = "QUASIPOT_OUTPUT_ROOT";
/// Largest `|V(xbar)|` accepted from a loaded checkpoint.
pub const ANCHOR_TOLERANCE: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CaseAConfig {
    pub boundary: LineSegment,
    pub epsilons: Vec<f64>,
}

impl Default for CaseAConfig {
    fn default() -> Self {
        CaseAConfig {
            boundary: LineSegment::vertical(-0.5, -0.8, 0.8),
            epsilons: vec![0.08, 0.1, 0.14, 0.2],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CaseBConfig {
    /// Location of a registered saddle.
    pub saddle: Vec<f64>,
    /// Where simulated trajectories count as having crossed the separatrix.
    pub exit: ExitRegion,
    pub epsilons: Vec<f64>,
}

impl Default for CaseBConfig {
    fn default() -> Self {
        CaseBConfig {
            saddle: vec![0.0, 0.0],
            exit: ExitRegion::HalfSpace {
                normal: vec![1.0, 0.0],
                offset: 0.0,
            },
            epsilons: vec![0.1, 0.12, 0.15, 0.2],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub system: String,
    pub hidden: Vec<usize>,
    pub train: TrainConfig,
    pub case_a: CaseAConfig,
    pub case_b: CaseBConfig,
    pub path: PathOptions,
    pub prefactor: PrefactorSettings,
    pub mc: McParams,
    pub output_dir: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            system: BENCHMARK_KEY.into(),
            hidden: vec![20; 6],
            train: TrainConfig::default(),
            case_a: CaseAConfig::default(),
            case_b: CaseBConfig::default(),
            path: PathOptions::default(),
            prefactor: PrefactorSettings::default(),
            mc: McParams::default(),
            output_dir: None,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::usage(format!("cannot read config {}: {e}", path.display())))?;
        let cfg: RunConfig =
            serde_json::from_str(&text).map_err(|e| Error::usage(format!("invalid config {}: {e}", path.display())))?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn architecture(&self) -> Result<Architecture> {
        Architecture::new(self.train.xbar.len(), self.hidden.clone())
    }

    pub fn validate(&self, registry: &SystemRegistry) -> Result<Registered> {
        let reg = registry.get(&self.system)?;
        let n = reg.system.dim();
        self.train.validate()?;
        crate::error::check_dim(n, self.train.xbar.len())?;
        self.architecture()?;
        self.case_a.boundary.validate()?;
        crate::error::check_dim(n, self.case_a.boundary.origin.len())?;
        registered_saddle(&reg, &self.case_b.saddle)?;
        for e in self.case_a.epsilons.iter().chain(&self.case_b.epsilons) {
            if !(*e > 0.0) {
                return Err(Error::usage("epsilons must be positive"));
            }
        }
        Ok(reg)
    }

    /// `--out`, else the config's `output_dir`, else `$QUASIPOT_OUTPUT_ROOT`,
    /// else `runs`.
    pub fn output_dir(&self, flag: Option<&Path>) -> PathBuf {
        flag.map(Path::to_path_buf)
            .or_else(|| self.output_dir.clone())
            .or_else(|| std::env::var_os(OUTPUT_ROOT_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("runs"))
    }
}

fn registered_saddle(reg: &Registered, at: &[f64]) -> Result<FixedPoint> {
    reg.system
        .nearest_fixed_point(at, FixedKind::Saddle)
        .filter(|fp| distance(&fp.location, at) <= 1e-6)
        .cloned()
        .ok_or_else(|| Error::usage(format!("no registered saddle at {at:?}")))
}

/// A configuration resolved against the registry, with the field every
/// downstream command evaluates.
#[derive(Debug, Clone)]
pub struct Context {
    pub config: RunConfig,
    pub registered: Registered,
    pub field: PotentialField,
    pub checkpoint: Option<PathBuf>,
}

impl Context {
    /// Learned field from `checkpoint`, or the system's exact decomposition.
    pub fn new(config: RunConfig, checkpoint: Option<&Path>) -> Result<Self> {
        let registered = config.validate(&SystemRegistry::builtin())?;
        let field = match checkpoint {
            Some(path) => {
                let (params, meta) = load_checkpoint(path)?;
                if meta.system != config.system {
                    return Err(Error::usage(format!(
                        "checkpoint was trained on '{}', config names '{}'",
                        meta.system, config.system
                    )));
                }
                PotentialField::Learned(LearnedField::new(Arc::new(params), meta.xbar, ANCHOR_TOLERANCE)?)
            }
            None => match &registered.benchmark {
                Some(b) => PotentialField::analytic(b.clone()),
                None => {
                    return Err(Error::usage(format!(
                        "system '{}' has no exact decomposition; pass a checkpoint",
                        config.system
                    )))
                }
            },
        };
        Ok(Context {
            config,
            registered,
            field,
            checkpoint: checkpoint.map(Path::to_path_buf),
        })
    }

    pub fn xbar(&self) -> &[f64] {
        &self.config.train.xbar
    }

    pub fn saddle(&self) -> Result<FixedPoint> {
        registered_saddle(&self.registered, &self.config.case_b.saddle)
    }

    pub fn epsilons(&self, case: Case) -> &[f64] {
        match case {
            Case::A => &self.config.case_a.epsilons,
            Case::B => &self.config.case_b.epsilons,
        }
    }

    pub fn baseline(&self, case: Case) -> Result<Baseline> {
        if !self.config.prefactor.subtract_baseline {
            return Ok(Baseline::None);
        }
        let xbar = self.xbar().to_vec();
        Ok(match case {
            Case::A => Baseline::Stable { xbar },
            Case::B => Baseline::StableAndSaddle {
                xbar,
                saddle: self.saddle()?.location,
            },
        })
    }

    /// Start point of the reverse integration and the path itself.
    pub fn solve_path(&self, case: Case) -> Result<CasePath> {
        let sys = &self.registered.system;
        let (start, exit, seed) = match case {
            Case::A => {
                let e = exit_point_on_boundary(&self.field, &self.config.case_a.boundary)?;
                (e.point.clone(), Some(e), None)
            }
            Case::B => {
                let s = saddle_seed(sys, &self.saddle()?, self.config.path.delta1, self.xbar())?;
                (s.point.clone(), None, Some(s))
            }
        };
        let path = integrate_mpp(sys, &self.field, &start, self.xbar(), &self.config.path)?;
        Ok(CasePath { case, exit, seed, path })
    }

    pub fn prefactor(&self, case: Case) -> Result<(CasePath, PrefactorReport)> {
        let cp = self.solve_path(case)?;
        let sys = &self.registered.system;
        let settings = &self.config.prefactor;
        let report = match case {
            Case::A => prefactor_case_a(
                sys,
                &self.field,
                self.xbar(),
                &self.config.case_a.boundary,
                cp.exit.as_ref().expect("case A has an exit point"),
                &cp.path,
                self.epsilons(case),
                settings,
            )?,
            Case::B => prefactor_case_b(
                sys,
                &self.field,
                self.xbar(),
                &self.saddle()?,
                cp.seed.as_ref().expect("case B has a seed"),
                &cp.path,
                self.epsilons(case),
                settings,
            )?,
        };
        Ok((cp, report))
    }

    pub fn mc_setup(&self, case: Case) -> Result<McSetup> {
        let exit = match case {
            Case::A => {
                let b = &self.config.case_a.boundary;
                ExitRegion::HalfSpace {
                    normal: b.normal.clone(),
                    offset: b.normal.iter().zip(&b.origin).map(|(n, o)| n * o).sum(),
                }
            }
            Case::B => self.config.case_b.exit.clone(),
        };
        McSetup::new(
            self.registered.system.clone(),
            self.xbar().to_vec(),
            exit,
            self.epsilons(case).to_vec(),
            self.config.mc.clone(),
        )
    }
}

#[derive(Debug, Clone)]
pub struct CasePath {
    pub case: Case,
    pub exit: Option<ExitPoint>,
    pub seed: Option<SaddleSeed>,
    pub path: PathResult,
}

/// Writes files under one run directory.
#[derive(Debug, Clone)]
pub struct RunDir {
    root: PathBuf,
}

#[derive(Serialize)]
struct Snapshot<'a> {
    tool: &'a str,
    version: &'a str,
    command: &'a str,
    checkpoint: Option<&'a Path>,
    config: &'a RunConfig,
}

impl RunDir {
    pub fn create(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        fs::create_dir_all(&root)?;
        Ok(RunDir { root })
    }

    pub fn path(&self) -> &Path {
        &self.root
    }

    pub fn join(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn write(&self, name: &str, contents: &str) -> Result<PathBuf> {
        let p = self.join(name);
        if let Some(dir) = p.parent() {
            fs::create_dir_all(dir)?;
        }
        fs::write(&p, contents)?;
        Ok(p)
    }

    pub fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<PathBuf> {
        self.write(name, &(serde_json::to_string_pretty(value)? + "\n"))
    }

    /// `provenance/<command>.json`.
    pub fn snapshot(&self, command: &str, config: &RunConfig, checkpoint: Option<&Path>) -> Result<PathBuf> {
        self.write_json(
            &format!("provenance/{command}.json"),
            &Snapshot {
                tool: TOOL_NAME,
                version: TOOL_VERSION,
                command,
                checkpoint,
                config,
            },
        )
    }
}

fn case_tag(case: Case) -> &'static str {
    match case {
        Case::A => "A",
        Case::B => "B",
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub epochs: usize,
    pub final_loss: Option<f64>,
    pub metrics: Option<ErrorMetricsSummary>,
    pub checkpoint: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorMetricsSummary {
    /// On the evaluation grid.
    pub e_v: f64,
    pub e_l: f64,
    pub grid_counts: Vec<usize>,
    /// The same metrics over the training points.
    pub e_v_training: f64,
    pub e_l_training: f64,
}

impl ErrorMetricsSummary {
    fn new(grid: &ErrorMetrics, training: (f64, f64)) -> Self {
        ErrorMetricsSummary {
            e_v: grid.e_v,
            e_l: grid.e_l,
            grid_counts: grid.grid.counts.clone(),
            e_v_training: training.0,
            e_l_training: training.1,
        }
    }
}

/// Trains, writing `checkpoints/`, `history.csv` and `metrics.json`.
pub fn cmd_train(
    config: &RunConfig,
    resume: Option<&Path>,
    out: &RunDir,
    progress: Option<&mut dyn FnMut(&EpochRecord)>,
) -> Result<TrainSummary> {
    let reg = config.validate(&SystemRegistry::builtin())?;
    out.snapshot("train", config, resume)?;
    let arch = config.architecture()?;
    let resume = match resume {
        Some(p) => {
            let (params, meta) = load_checkpoint(p)?;
            if meta.system != config.system {
                return Err(Error::usage(format!(
                    "checkpoint was trained on '{}', config names '{}'",
                    meta.system, config.system
                )));
            }
            Some((params, meta.epochs))
        }
        None => None,
    };
    let outcome = train_with(
        &reg.system,
        &arch,
        &config.train,
        TrainOptions {
            resume,
            checkpoint_dir: Some(out.join("checkpoints")),
            system_key: config.system.clone(),
            progress,
        },
    )?;
    out.write("history.csv", &outcome.history.to_csv())?;
    let metrics = match &reg.benchmark {
        Some(b) => {
            let grid = approximation_errors(&outcome.params, &config.train.xbar, b, &Grid::evaluation_default())?;
            let field = LearnedField::unchecked(Arc::new(outcome.params.clone()), config.train.xbar.clone());
            let training = approximation_errors_at(b.as_ref(), &sample_training_set(&config.train), |x| {
                Ok((field.potential(x)?, field.rotational(x)?))
            })?;
            Some(ErrorMetricsSummary::new(&grid, training))
        }
        None => None,
    };
    let summary = TrainSummary {
        epochs: config.train.epochs,
        final_loss: outcome.history.records.last().map(|r| r.loss.total),
        metrics,
        checkpoint: out.join("checkpoints/final.qpn"),
    };
    out.write_json("metrics.json", &summary)?;
    Ok(summary)
}

/// Learned and/or exact `V` and `l` on `grid`, one CSV row per node.
pub fn cmd_surface(ctx: &Context, grid: &Grid, out: &RunDir) -> Result<usize> {
    out.snapshot("surface", &ctx.config, ctx.checkpoint.as_deref())?;
    let n = grid.counts.len();
    crate::error::check_dim(ctx.field.dim(), n)?;
    let learned = matches!(ctx.field, PotentialField::Learned(_));
    let truth = ctx.registered.benchmark.as_ref();
    let mut header: Vec<String> = (1..=n).map(|k| format!("x{k}")).collect();
    if learned {
        header.push("V_theta".into());
    }
    if truth.is_some() {
        header.push("V_true".into());
    }
    if learned {
        header.extend((1..=n).map(|k| format!("l_theta_{k}")));
    }
    if truth.is_some() {
        header.extend((1..=n).map(|k| format!("l_true_{k}")));
    }
    let mut s = header.join(",");
    s.push('\n');
    let points = grid.points();
    for x in &points {
        let mut row: Vec<f64> = x.clone();
        let sample = if learned { Some(ctx.field.eval(x)?) } else { None };
        if let Some(f) = &sample {
            row.push(f.v);
        }
        if let Some(b) = truth {
            row.push(b.true_quasipotential(x));
        }
        if let Some(f) = &sample {
            row.extend(&f.l);
        }
        if let Some(b) = truth {
            row.extend(b.true_rotational(x));
        }
        s.push_str(&row.iter().map(|v| crate::fmt_f64(*v)).collect::<Vec<_>>().join(","));
        s.push('\n');
    }
    out.write("surface.csv", &s)?;
    Ok(points.len())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MppSummary {
    pub case: Case,
    pub backing: String,
    pub start: Vec<f64>,
    pub exit_point: Option<ExitPoint>,
    pub seed: Option<SaddleSeed>,
    pub status: PathStatus,
    pub nodes: usize,
    pub length: f64,
    pub speed_range: (f64, f64),
    pub stalled_at: Option<Vec<f64>>,
    pub div_integral: Option<f64>,
}

/// `path_<case>.csv` and `mpp_<case>.json`. A path that does not reach the
/// stable point is written out and then reported as a numerical failure.
pub fn cmd_mpp(ctx: &Context, case: Case, out: &RunDir) -> Result<MppSummary> {
    let tag = case_tag(case);
    out.snapshot(&format!("mpp_{tag}"), &ctx.config, ctx.checkpoint.as_deref())?;
    let cp = ctx.solve_path(case)?;
    let sys = &ctx.registered.system;
    out.write(&format!("path_{tag}.csv"), &path_csv(sys, &ctx.field, &cp.path)?)?;
    let converged = cp.path.status == PathStatus::Converged;
    let div = if converged {
        Some(divergence_integral(sys, &ctx.field, &cp.path, &ctx.baseline(case)?)?)
    } else {
        None
    };
    let summary = MppSummary {
        case,
        backing: ctx.field.backing().into(),
        start: cp.path.exit_end().to_vec(),
        exit_point: cp.exit.clone(),
        seed: cp.seed.clone(),
        status: cp.path.status,
        nodes: cp.path.points.len(),
        length: cp.path.length(),
        speed_range: cp.path.speed_range,
        stalled_at: cp.path.stalled_at.clone(),
        div_integral: div,
    };
    out.write_json(&format!("mpp_{tag}.json"), &summary)?;
    if !converged {
        return Err(Error::numerical(format!(
            "path from {:?} ended with status {:?} at {:?}",
            summary.start, summary.status, cp.path.stalled_at
        )));
    }
    Ok(summary)
}

/// `prefactor_<case>.json`.
pub fn cmd_prefactor(ctx: &Context, case: Case, out: &RunDir) -> Result<PrefactorReport> {
    let tag = case_tag(case);
    out.snapshot(&format!("prefactor_{tag}"), &ctx.config, ctx.checkpoint.as_deref())?;
    let (_, report) = ctx.prefactor(case)?;
    out.write_json(&format!("prefactor_{tag}.json"), &report)?;
    Ok(report)
}

/// `met_<case>.csv`: the formula's mean exit time over the case's epsilons.
pub fn cmd_met(ctx: &Context, case: Case, out: &RunDir) -> Result<PrefactorReport> {
    let tag = case_tag(case);
    out.snapshot(&format!("met_{tag}"), &ctx.config, ctx.checkpoint.as_deref())?;
    let (_, report) = ctx.prefactor(case)?;
    out.write(&format!("met_{tag}.csv"), &met_csv(&report, ctx.epsilons(case))?)?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McResult {
    pub case: Case,
    pub stats: ExitTimeStats,
    pub formula: PrefactorReport,
    pub comparison: Comparison,
}

/// `mc_<case>.json` and `mc_<case>.csv`: simulated against the formula.
pub fn cmd_mc(ctx: &Context, case: Case, out: &RunDir) -> Result<McResult> {
    let tag = case_tag(case);
    out.snapshot(&format!("mc_{tag}"), &ctx.config, ctx.checkpoint.as_deref())?;
    let (_, report) = ctx.prefactor(case)?;
    let stats = exit_time_stats(&ctx.mc_setup(case)?)?;
    let comparison = compare_with_formula(&stats, &report)?;
    out.write(&format!("mc_{tag}.csv"), &comparison.to_csv())?;
    let result = McResult {
        case,
        stats,
        formula: report,
        comparison,
    };
    out.write_json(&format!("mc_{tag}.json"), &result)?;
    Ok(result)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseReport {
    pub case: Case,
    pub backing: String,
    pub v_star: f64,
    pub l_coefficient: f64,
    pub epsilon_power: f64,
    pub div_integral: f64,
    pub warnings: Vec<String>,
    pub comparison: Comparison,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub training: Option<TrainSummary>,
    pub cases: Vec<CaseReport>,
}

/// Bundles `metrics.json` and every `mc_<case>.json` of a run directory
/// into `report.json` and `report.csv`.
pub fn cmd_report(run_dir: &Path) -> Result<Report> {
    if !run_dir.is_dir() {
        return Err(Error::usage(format!("{} is not a run directory", run_dir.display())));
    }
    let read = |name: &str| -> Result<Option<String>> {
        let p = run_dir.join(name);
        Ok(if p.exists() { Some(fs::read_to_string(p)?) } else { None })
    };
    let training = match read("metrics.json")? {
        Some(t) => Some(serde_json::from_str(&t)?),
        None => None,
    };
    let mut cases = Vec::new();
    for case in [Case::A, Case::B] {
        if let Some(t) = read(&format!("mc_{}.json", case_tag(case)))? {
            let r: McResult = serde_json::from_str(&t)?;
            cases.push(CaseReport {
                case,
                backing: r.formula.provenance.backing.clone(),
                v_star: r.formula.v_star,
                l_coefficient: r.formula.l_coefficient,
                epsilon_power: r.formula.epsilon_power,
                div_integral: r.formula.div_integral,
                warnings: r.formula.warnings.clone(),
                comparison: r.comparison,
            });
        }
    }
    if training.is_none() && cases.is_empty() {
        return Err(Error::usage(format!(
            "{} holds neither metrics.json nor mc_<case>.json",
            run_dir.display()
        )));
    }
    let report = Report { training, cases };
    let out = RunDir::create(run_dir)?;
    out.write_json("report.json", &report)?;
    let mut csv = String::from("case,epsilon,met_mc,stderr,n_effective,censored,met_formula,rel_err\n");
    for c in &report.cases {
        for line in c.comparison.to_csv().lines().skip(1) {
            csv.push_str(case_tag(c.case));
            csv.push(',');
            csv.push_str(line);
            csv.push('\n');
        }
    }
    out.write("report.csv", &csv)?;
    Ok(report)
}
