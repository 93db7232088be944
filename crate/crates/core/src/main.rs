use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use quasipot::pipeline::{self, Context, RunConfig, RunDir};
use quasipot::prefactor::Case;
use quasipot::train::{EpochRecord, Grid};
use quasipot::{Error, Result};

#[derive(Parser)]
#[command(
    name = "quasipot",
    version,
    about = "Learned quasipotentials, exit paths and mean exit times"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON run configuration; defaults apply to absent keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run directory [default: config output_dir, then $QUASIPOT_OUTPUT_ROOT, then ./runs].
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides train.seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct FieldArgs {
    /// Trained network; the exact decomposition is used when omitted.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Overrides prefactor.riccati_paper_convention.
    #[arg(long)]
    riccati_paper_convention: bool,
    /// Overrides prefactor.printed_exponent_sign.
    #[arg(long)]
    printed_exponent_sign: bool,
}

#[derive(Args)]
struct CaseArg {
    /// A (non-characteristic boundary) or B (exit through the saddle).
    #[arg(long)]
    case: String,
}

#[derive(Subcommand)]
enum Command {
    /// Train the decomposition network.
    Train {
        #[command(flatten)]
        common: Common,
        /// Overrides train.samples.
        #[arg(long)]
        n: Option<usize>,
        /// Overrides train.epochs (total, including resumed epochs).
        #[arg(long)]
        epochs: Option<usize>,
        /// Overrides train.learning_rate.
        #[arg(long)]
        learning_rate: Option<f64>,
        /// Continue from a checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Tabulate V and l on a grid over the training region.
    Surface {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        field: FieldArgs,
        /// Grid nodes per axis, e.g. 101x81.
        #[arg(long, default_value = "101x81")]
        grid: String,
    },
    /// Integrate the most probable exit path.
    Mpp {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        field: FieldArgs,
        #[command(flatten)]
        case: CaseArg,
    },
    /// Compute the prefactor report.
    Prefactor {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        field: FieldArgs,
        #[command(flatten)]
        case: CaseArg,
    },
    /// Tabulate the formula mean exit time over the case's epsilons.
    Met {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        field: FieldArgs,
        #[command(flatten)]
        case: CaseArg,
    },
    /// Simulate exit times and compare with the formula.
    Mc {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        field: FieldArgs,
        #[command(flatten)]
        case: CaseArg,
        /// Overrides mc.trajectories.
        #[arg(long)]
        trajectories: Option<usize>,
        /// Overrides mc.dt.
        #[arg(long)]
        dt: Option<f64>,
        /// Overrides mc.max_steps.
        #[arg(long)]
        max_steps: Option<u64>,
    },
    /// Bundle the training metrics and simulation comparisons of a run directory.
    Report { run_dir: PathBuf },
}

fn load_config(common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.train.seed = s;
        cfg.mc.seed = s;
    }
    Ok(cfg)
}

fn context(common: &Common, field: &FieldArgs) -> Result<(Context, RunDir)> {
    let mut cfg = load_config(common)?;
    cfg.prefactor.riccati_paper_convention |= field.riccati_paper_convention;
    cfg.prefactor.printed_exponent_sign |= field.printed_exponent_sign;
    let out = RunDir::create(cfg.output_dir(common.out.as_deref()))?;
    Ok((Context::new(cfg, field.checkpoint.as_deref())?, out))
}

fn parse_grid(spec: &str, cfg: &RunConfig) -> Result<Grid> {
    let counts = spec
        .split('x')
        .map(|s| s.trim().parse::<usize>())
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|_| Error::usage(format!("bad grid '{spec}', expected e.g. 101x81")))?;
    if counts.len() != cfg.train.region.dim() || counts.iter().any(|&c| c < 2) {
        return Err(Error::usage(format!(
            "grid '{spec}' needs one count >= 2 per dimension"
        )));
    }
    Ok(Grid {
        region: cfg.train.region.clone(),
        counts,
    })
}

fn print_json<T: serde::Serialize>(v: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train {
            common,
            n,
            epochs,
            learning_rate,
            resume,
        } => {
            let mut cfg = load_config(&common)?;
            if let Some(n) = n {
                cfg.train.samples = n;
            }
            if let Some(e) = epochs {
                cfg.train.epochs = e;
            }
            if let Some(lr) = learning_rate {
                cfg.train.learning_rate = lr;
            }
            let out = RunDir::create(cfg.output_dir(common.out.as_deref()))?;
            let every = cfg.train.checkpoint_every.max(1);
            let mut progress = |r: &EpochRecord| {
                if r.epoch.is_multiple_of(every) || r.epoch == 1 {
                    eprintln!("epoch {:>7}  loss {:.6e}", r.epoch, r.loss.total);
                }
            };
            let summary = pipeline::cmd_train(&cfg, resume.as_deref(), &out, Some(&mut progress))?;
            print_json(&summary)
        }
        Command::Surface { common, field, grid } => {
            let (ctx, out) = context(&common, &field)?;
            let grid = parse_grid(&grid, &ctx.config)?;
            let rows = pipeline::cmd_surface(&ctx, &grid, &out)?;
            println!("{rows} rows -> {}", out.join("surface.csv").display());
            Ok(())
        }
        Command::Mpp { common, field, case } => {
            let (ctx, out) = context(&common, &field)?;
            print_json(&pipeline::cmd_mpp(&ctx, case.case.parse::<Case>()?, &out)?)
        }
        Command::Prefactor { common, field, case } => {
            let (ctx, out) = context(&common, &field)?;
            print_json(&pipeline::cmd_prefactor(&ctx, case.case.parse::<Case>()?, &out)?)
        }
        Command::Met { common, field, case } => {
            let c = case.case.parse::<Case>()?;
            let (ctx, out) = context(&common, &field)?;
            pipeline::cmd_met(&ctx, c, &out)?;
            print!(
                "{}",
                std::fs::read_to_string(out.join(&format!("met_{}.csv", case.case.to_uppercase())))?
            );
            Ok(())
        }
        Command::Mc {
            common,
            field,
            case,
            trajectories,
            dt,
            max_steps,
        } => {
            let c = case.case.parse::<Case>()?;
            let (mut ctx, out) = context(&common, &field)?;
            if let Some(m) = trajectories {
                ctx.config.mc.trajectories = m;
            }
            if let Some(dt) = dt {
                ctx.config.mc.dt = dt;
            }
            if let Some(s) = max_steps {
                ctx.config.mc.max_steps = s;
            }
            let r = pipeline::cmd_mc(&ctx, c, &out)?;
            print!("{}", r.comparison.to_csv());
            Ok(())
        }
        Command::Report { run_dir } => print_json(&pipeline::cmd_report(Path::new(&run_dir))?),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 64 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("quasipot: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
