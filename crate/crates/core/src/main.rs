use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use isac_recon::config::RunConfig;
use isac_recon::harness::{self, Method, TrainTarget};
use isac_recon::Error;

#[derive(Parser)]
#[command(name = "isac-recon", version, about = "Environment reconstruction from multipath channel parameters")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON run configuration; defaults are used for missing fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the configured base seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

impl Common {
    fn load(&self) -> Result<RunConfig, Error> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset.
    Gen {
        #[command(flatten)]
        common: Common,
    },
    /// Prepare a raw `x y z` point list.
    Prep {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        input: PathBuf,
    },
    /// Train stage 1, 2, 3, all stages, or the single-stage baseline.
    Train {
        #[command(flatten)]
        common: Common,
        /// Dataset directory.
        #[arg(long)]
        data: PathBuf,
        /// 1, 2, 3, all or crnet.
        #[arg(long, default_value = "all")]
        stage: String,
    },
    /// Evaluate methods on the validation split.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        /// Directory holding the checkpoints.
        #[arg(long)]
        models: PathBuf,
        /// mscr, crnet or backprojection; repeatable. Defaults to all.
        #[arg(long)]
        method: Vec<String>,
    },
    /// Accumulate reconstructions of consecutive validation frames.
    Sequence {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        models: PathBuf,
        /// Defaults to mscr and backprojection.
        #[arg(long)]
        method: Vec<String>,
    },
    /// Parameter count, FLOPs and inference latency.
    Bench {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        models: PathBuf,
        /// Timed runs; defaults to the configured count.
        #[arg(long)]
        runs: Option<usize>,
    },
    /// Score one predicted point list against ground truth.
    Metrics {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        threshold: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Plot-ready tables from an evaluation directory.
    Report {
        /// Directory holding `eval_*.csv` (and optionally `bench.json`).
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn methods(names: &[String], default: &[Method]) -> Result<Vec<Method>, Error> {
    if names.is_empty() {
        return Ok(default.to_vec());
    }
    names.iter().map(|n| Method::parse(n)).collect()
}

fn train_target(s: &str) -> Result<TrainTarget, Error> {
    match s {
        "1" | "2" | "3" => Ok(TrainTarget::Stage(s.parse().expect("digit"))),
        "all" => Ok(TrainTarget::All),
        "crnet" => Ok(TrainTarget::Crnet),
        other => Err(Error::Config(format!("unknown stage {other:?} (expected 1, 2, 3, all or crnet)"))),
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Gen { common } => {
            harness::cmd_gen(&common.load()?, &common.out)?;
        }
        Command::Prep { common, input } => {
            harness::cmd_prep(&common.load()?, &input, &common.out)?;
        }
        Command::Train { common, data, stage } => {
            let target = train_target(&stage)?;
            harness::cmd_train(&common.load()?, &data, &common.out, target)?;
        }
        Command::Eval { common, data, models, method } => {
            let m = methods(&method, &Method::ALL)?;
            harness::cmd_eval(&common.load()?, &data, &models, &common.out, &m)?;
        }
        Command::Sequence { common, data, models, method } => {
            let m = methods(&method, &[Method::Mscr, Method::Backprojection])?;
            harness::cmd_sequence(&common.load()?, &data, &models, &common.out, &m)?;
        }
        Command::Bench { common, data, models, runs } => {
            let cfg = common.load()?;
            let runs = runs.unwrap_or(cfg.eval.bench_runs);
            harness::cmd_bench(&cfg, &data, &models, &common.out, runs)?;
        }
        Command::Metrics { pred, gt, threshold, out } => {
            harness::cmd_metrics(&pred, &gt, threshold, &out)?;
        }
        Command::Report { run, out } => {
            harness::cmd_report(&run, &out)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
