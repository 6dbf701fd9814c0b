use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use jmb_core::ao::{Init, Mode};
use jmb_core::harness::{self, ExperimentSpec};
use jmb_core::model::ErrorModel;
use jmb_core::verify;

#[derive(Parser)]
#[command(
    name = "jmb",
    version,
    about = "Max-min fair multicast-assisted precoding with partial CSIT"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve one randomly drawn instance and print the result as JSON.
    Solve(SolveArgs),
    /// Objective trace per iteration on one channel, as CSV.
    Converge(ConvergeArgs),
    /// Ergodic rates over random channels, as CSV.
    Ergodic(ErgodicArgs),
    /// Run the oracle suites; exits nonzero on any failure.
    Verify(VerifyArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Jmb,
    Bc,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Mode {
        match m {
            ModeArg::Jmb => Mode::Jmb,
            ModeArg::Bc => Mode::ConventionalBc,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum InitArg {
    ZfE,
    ZfSvd,
}

impl From<InitArg> for Init {
    fn from(i: InitArg) -> Init {
        match i {
            InitArg::ZfE => Init::ZfE,
            InitArg::ZfSvd => Init::ZfSvd,
        }
    }
}

/// Flags shared by the experiment commands; each overrides the config file.
#[derive(Args)]
struct Common {
    /// JSON file with an experiment spec.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Transmit antennas.
    #[arg(long)]
    ntx: Option<usize>,
    /// Users.
    #[arg(long)]
    k: Option<usize>,
    /// Decaying error variance `P_t^-alpha`.
    #[arg(long, conflicts_with = "sigma_e2")]
    alpha: Option<f64>,
    /// Fixed error variance.
    #[arg(long)]
    sigma_e2: Option<f64>,
    /// Realizations per sample set.
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Convergence threshold in bits.
    #[arg(long)]
    eps_r: Option<f64>,
    /// AO iteration cap.
    #[arg(long)]
    n_max: Option<usize>,
    /// Write here instead of stdout.
    #[arg(long, short)]
    output: Option<PathBuf>,
}

impl Common {
    fn spec(&self) -> Result<ExperimentSpec> {
        let mut spec = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
            }
            None => ExperimentSpec::default(),
        };
        let sc = &mut spec.scenario;
        if let Some(v) = self.ntx {
            sc.n_tx = v;
        }
        if let Some(v) = self.k {
            sc.n_users = v;
        }
        if let Some(alpha) = self.alpha {
            sc.error_model = ErrorModel::Decaying { alpha };
        }
        if let Some(sigma_e2) = self.sigma_e2 {
            sc.error_model = ErrorModel::Fixed { sigma_e2 };
        }
        if let Some(v) = self.m {
            sc.sample_size = v;
        }
        if let Some(v) = self.seed {
            spec.seed = v;
        }
        if let Some(v) = self.eps_r {
            spec.eps_r = v;
        }
        if let Some(v) = self.n_max {
            spec.n_max = v;
        }
        Ok(spec)
    }

    fn writer(&self) -> Result<Box<dyn Write>> {
        Ok(match &self.output {
            Some(path) => Box::new(BufWriter::new(
                File::create(path).with_context(|| format!("creating {}", path.display()))?,
            )),
            None => Box::new(io::stdout().lock()),
        })
    }
}

#[derive(Args)]
struct SolveArgs {
    #[command(flatten)]
    common: Common,
    /// SNR in dB (defaults to the first grid point of the config).
    #[arg(long)]
    snr_db: Option<f64>,
    #[arg(long, value_enum, default_value = "zf-e")]
    init: InitArg,
    #[arg(long, value_enum, default_value = "jmb")]
    mode: ModeArg,
    /// Channel index within the seed's stream.
    #[arg(long, default_value_t = 0)]
    channel: usize,
    /// Also write the first precoder-update problem as text.
    #[arg(long)]
    dump_qcqp: Option<PathBuf>,
}

#[derive(Args)]
struct ConvergeArgs {
    #[command(flatten)]
    common: Common,
    /// SNR points in dB.
    #[arg(long, value_delimiter = ',', default_values_t = [5.0, 20.0, 35.0])]
    snr_db: Vec<f64>,
    /// Initializations to trace.
    #[arg(long, value_enum, value_delimiter = ',', default_values_t = [InitArg::ZfE, InitArg::ZfSvd])]
    inits: Vec<InitArg>,
}

#[derive(Args)]
struct ErgodicArgs {
    #[command(flatten)]
    common: Common,
    /// SNR grid in dB.
    #[arg(long, value_delimiter = ',')]
    snr_db: Option<Vec<f64>>,
    /// Evaluation channels per SNR point.
    #[arg(long)]
    channels: Option<usize>,
    #[arg(long, value_enum, value_delimiter = ',')]
    modes: Option<Vec<ModeArg>>,
    #[arg(long, value_enum, value_delimiter = ',')]
    inits: Option<Vec<InitArg>>,
    /// Draw fresh channels at every SNR point.
    #[arg(long)]
    unpaired: bool,
    /// 200 channels and M = 1000.
    #[arg(long)]
    full_scale: bool,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Smaller suites for a quick check.
    #[arg(long)]
    quick: bool,
}

fn solve(args: &SolveArgs) -> Result<()> {
    let mut spec = args.common.spec()?;
    if let Some(snr) = args.snr_db {
        spec.snr_grid_db = vec![snr];
    }
    spec.snr_grid_db.truncate(1);
    spec.inits = vec![args.init.into()];
    spec.validate()?;
    let inst = spec.instance(0, args.channel)?;
    let cfg = spec.ao_config(args.mode.into(), args.init.into());
    if let Some(path) = &args.dump_qcqp {
        let qcqp = harness::first_update_problem(&inst, &cfg)?;
        write_file(path, qcqp.to_text().as_bytes())?;
    }
    let (_, out) = harness::solve_instance(&inst, &cfg)?;
    let mut w = args.common.writer()?;
    serde_json::to_writer_pretty(&mut w, &out)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn converge(args: &ConvergeArgs) -> Result<()> {
    let mut spec = args.common.spec()?;
    spec.inits = args.inits.iter().map(|&i| i.into()).collect();
    let alpha = match spec.scenario.error_model {
        ErrorModel::Decaying { alpha } => alpha,
        ErrorModel::Fixed { .. } => bail!("the convergence protocol uses a decaying error model; pass --alpha"),
    };
    let rows = harness::run_convergence(&spec, &args.snr_db, alpha)?;
    harness::write_convergence_csv(&rows, args.common.writer()?)?;
    Ok(())
}

fn ergodic(args: &ErgodicArgs) -> Result<()> {
    let mut spec = args.common.spec()?;
    if args.full_scale {
        spec = spec.full_scale();
    }
    if let Some(grid) = &args.snr_db {
        spec.snr_grid_db = grid.clone();
    }
    if let Some(n) = args.channels {
        spec.n_channels = n;
    }
    if let Some(modes) = &args.modes {
        spec.modes = modes.iter().map(|&m| m.into()).collect();
    }
    if let Some(inits) = &args.inits {
        spec.inits = inits.iter().map(|&i| i.into()).collect();
    }
    if args.unpaired {
        spec.paired_sampling = false;
    }
    let report = harness::run_ergodic(&spec)?;
    harness::write_ergodic_csv(&report.records, args.common.writer()?)?;
    Ok(())
}

fn run_verify(args: &VerifyArgs) -> Result<bool> {
    let reports = if args.quick {
        vec![
            verify::waterfill_suite(100, args.seed),
            verify::solver_suite(5, args.seed),
            verify::awmse_suite(10, args.seed),
        ]
    } else {
        verify::run_all(args.seed)
    };
    let mut ok = true;
    for r in &reports {
        println!("{} {}", if r.passed() { "PASS" } else { "FAIL" }, r.summary());
        for f in &r.failures {
            println!("  {f}");
        }
        ok &= r.passed();
    }
    Ok(ok)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Solve(a) => solve(a).map(|_| true),
        Command::Converge(a) => converge(a).map(|_| true),
        Command::Ergodic(a) => ergodic(a).map(|_| true),
        Command::Verify(a) => run_verify(a),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            log::debug!("{e:?}");
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
