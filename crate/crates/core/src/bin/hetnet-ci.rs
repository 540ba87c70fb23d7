use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use hetnet_ci::assignment::AssignmentMethod;
use hetnet_ci::experiment::{
    backhaul_overhead, budgets_for_total, draw_symbols, draw_trial_channels, load_config,
    margin_from_tnr_db, run_sweep, symbol_rng, write_csv, write_csv_file, SchemeFamily, SweepSpec,
};
use hetnet_ci::model::{watts_to_dbm, NetworkConfig};
use hetnet_ci::schemes::{CoordinatedPipeline, PipelineOptions, SchemeId, UncoordinatedPipeline};
use hetnet_ci::{selftest, Error, Result};

#[derive(Parser)]
#[command(name = "hetnet-ci", version, about = "Coordinated CI hybrid precoding simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Monte Carlo SER/power sweep written as CSV
    Simulate(SimulateArgs),
    /// Solve the assignment stage for one channel draw
    Assign(OneShotArgs),
    /// Run one scheme end to end for one channel draw and symbol slot
    Precode(PrecodeArgs),
    /// Backhaul coefficient counts
    Overhead(OverheadArgs),
    /// Built-in oracle checks
    Selftest,
}

#[derive(Args)]
struct NetworkArgs {
    /// TOML network configuration (default: built-in desk-scale network)
    #[arg(long)]
    config: Option<PathBuf>,
    /// Use the full-size network (64/32/32 antennas, 32/16/16 chains, 64 users)
    #[arg(long, conflicts_with = "config")]
    full_scale: bool,
    /// Master seed (default: the config's seed)
    #[arg(long)]
    seed: Option<u64>,
    /// Exact branch-and-bound assignment (default unless --full-scale)
    #[arg(long, conflicts_with = "heuristic_assignment")]
    exact_assignment: bool,
    /// Greedy assignment with local search
    #[arg(long)]
    heuristic_assignment: bool,
    /// Do not enforce per-BS budgets in the CI digital stage
    #[arg(long)]
    no_ci_caps: bool,
}

impl NetworkArgs {
    fn load(&self) -> Result<(NetworkConfig, PipelineOptions, u64)> {
        let mut cfg = match &self.config {
            Some(p) => load_config(p)?,
            None if self.full_scale => NetworkConfig::full_scale(),
            None => NetworkConfig::desk(),
        };
        if self.no_ci_caps {
            cfg.ci_power_caps = false;
        }
        cfg.validate()?;
        let mut opts = PipelineOptions::default();
        let heuristic = self.heuristic_assignment || (self.full_scale && !self.exact_assignment);
        if heuristic {
            opts.assignment.method = AssignmentMethod::Heuristic;
        }
        let seed = self.seed.unwrap_or(cfg.seed);
        Ok((cfg, opts, seed))
    }
}

fn parse_list<T: std::str::FromStr>(s: &str) -> std::result::Result<Vec<T>, String>
where
    T::Err: std::fmt::Display,
{
    s.split(',')
        .filter(|p| !p.trim().is_empty())
        .map(|p| p.trim().parse::<T>().map_err(|e| format!("`{p}`: {e}")))
        .collect()
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    net: NetworkArgs,
    /// Comma-separated schemes (default: all five)
    #[arg(long)]
    scheme: Option<String>,
    #[arg(long, default_value_t = 200)]
    trials: usize,
    /// Symbol slots per trial
    #[arg(long, default_value_t = 50)]
    symbols: usize,
    /// Margin grid for CI schemes, as TNR in dB
    #[arg(long, default_value = "-6,-3,0,3,6,9,12,15")]
    sweep: String,
    /// Total budget grid for ZF schemes, in dBm
    #[arg(long, default_value = "30,35,40,45,50,55,60,65")]
    zf_sweep: String,
    /// Output CSV path (default: stdout)
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct OneShotArgs {
    #[command(flatten)]
    net: NetworkArgs,
    #[arg(long, default_value = "ci-continuous")]
    scheme: String,
    /// Trial index of the channel draw
    #[arg(long, default_value_t = 0)]
    trial: usize,
}

#[derive(Args)]
struct PrecodeArgs {
    #[command(flatten)]
    shot: OneShotArgs,
    /// CI margin as TNR in dB (default: the config's margins)
    #[arg(long)]
    tnr: Option<f64>,
    /// ZF total budget in dBm (default: the config's budgets)
    #[arg(long)]
    budget: Option<f64>,
}

#[derive(Args)]
struct OverheadArgs {
    #[command(flatten)]
    net: NetworkArgs,
    /// Comma-separated coherence lengths
    #[arg(long, default_value = "1,10,100")]
    delta: String,
}

fn simulate(args: &SimulateArgs) -> Result<()> {
    let (cfg, opts, seed) = args.net.load()?;
    let schemes = match &args.scheme {
        Some(s) => parse_list::<SchemeId>(s).map_err(Error::Parse)?,
        None => SchemeId::ALL.to_vec(),
    };
    let spec = SweepSpec {
        schemes,
        margin_grid_db: parse_list(&args.sweep).map_err(Error::Parse)?,
        budget_grid_dbm: parse_list(&args.zf_sweep).map_err(Error::Parse)?,
        trials: args.trials,
        symbols_per_trial: args.symbols,
        seed,
    };
    let rows = run_sweep(&spec, &cfg, &opts)?;
    match &args.out {
        Some(p) => write_csv_file(&rows, p),
        None => write_csv(&rows, std::io::stdout().lock()),
    }
}

fn assign(args: &OneShotArgs) -> Result<()> {
    let (cfg, opts, seed) = args.net.load()?;
    let scheme: SchemeId = args.scheme.parse()?;
    let channels = draw_trial_channels(&cfg, seed, args.trial)?;
    if !scheme.is_coordinated() {
        let pipe = UncoordinatedPipeline::prepare(&cfg, &channels, &opts)?;
        println!("serving BS per user: {:?}", pipe.serving);
        for (g, blk) in pipe.analog.blocks.iter().enumerate() {
            println!("BS {g}: chains -> users {:?}", blk.column_users);
        }
        return Ok(());
    }
    let pipe = CoordinatedPipeline::prepare(scheme, &cfg, &channels, &opts)?;
    let a = &pipe.assignment;
    println!("mode {:?}, status {:?}, gap {:e}", a.mode, a.status, a.gap);
    println!("objective {:e}, tau {:e}", a.objective, a.tau);
    for (row, alpha) in a.alpha.iter().enumerate() {
        if let Some(k) = alpha.iter().position(|&v| v) {
            println!("row {row} (BS {}) -> user {k}", a.owner[row]);
        }
    }
    Ok(())
}

fn precode(args: &PrecodeArgs) -> Result<()> {
    let (cfg, opts, seed) = args.shot.net.load()?;
    let scheme: SchemeId = args.shot.scheme.parse()?;
    let channels = draw_trial_channels(&cfg, seed, args.shot.trial)?;
    let mut rng = symbol_rng(seed, scheme, 0.0, args.shot.trial);
    let symbols = draw_symbols(&mut rng, channels.num_users(), cfg.modulation_order);
    let margins = match args.tnr {
        Some(t) => vec![margin_from_tnr_db(&cfg, t); channels.num_users()],
        None => cfg.margins_vec()?,
    };
    let budgets = match args.budget {
        Some(b) => budgets_for_total(&cfg, b),
        None => cfg.budgets(),
    };
    let caps = cfg.ci_power_caps.then_some(budgets.as_slice());
    println!("symbols {:?}", symbols.indices);
    let sol = if scheme.is_coordinated() {
        let pipe = CoordinatedPipeline::prepare(scheme, &cfg, &channels, &opts)?;
        match scheme.digital_method() {
            hetnet_ci::model::DigitalMethod::Ci => pipe.precode_ci(&channels, &symbols, &margins, caps)?,
            hetnet_ci::model::DigitalMethod::Zf => pipe.precode_zf(&channels, &symbols, &budgets, None)?,
        }
    } else {
        let pipe = UncoordinatedPipeline::prepare(&cfg, &channels, &opts)?;
        let out = pipe.precode(&channels, &symbols, &margins, caps)?;
        println!("infeasible BSs {:?}", out.infeasible_bs);
        out.solution
    };
    for (g, p) in sol.power.per_bs.iter().enumerate() {
        println!("BS {g}: {p:e} W ({:.3} dBm)", watts_to_dbm(*p));
    }
    println!("total: {:e} W ({:.3} dBm)", sol.power.total, watts_to_dbm(sol.power.total));
    if let Some(beta) = sol.zf_amplitude {
        println!("ZF amplitude {beta:e}");
    }
    if let Some(s) = &sol.ci_slack {
        println!("CI slack {s:?}");
    }
    Ok(())
}

fn overhead(args: &OverheadArgs) -> Result<()> {
    let (cfg, _, _) = args.net.load()?;
    let deltas: Vec<u64> = parse_list(&args.delta).map_err(Error::Parse)?;
    println!("delta,ci_total,zf_total");
    for d in deltas {
        let ci = backhaul_overhead(&cfg, d, SchemeFamily::Ci)?;
        let zf = backhaul_overhead(&cfg, d, SchemeFamily::Zf)?;
        println!("{d},{},{}", ci.total, zf.total);
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Assign(a) => assign(a),
        Command::Precode(a) => precode(a),
        Command::Overhead(a) => overhead(a),
        Command::Selftest => {
            let report = selftest::run();
            for line in &report.lines {
                println!("{line}");
            }
            if report.all_passed() {
                Ok(())
            } else {
                Err(Error::Domain(format!("{} self-test checks failed", report.failures())))
            }
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
