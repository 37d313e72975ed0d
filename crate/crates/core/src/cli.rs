//! The `edgechain` command line.
//!
//! Results go to standard output, or to `<out>/<name>.<ext>` with `--out`.
//! Progress and errors go to standard error. Exit status is 0 on success,
//! 1 on a domain failure and 2 on a usage or configuration error.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::config::{load_config, Config, SEED_ENV};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::experiments::{metadata, run_sweep, Figure, SweepContext};
use crate::market::{Market, PriceVector};
use crate::mining::{simulate_race, RaceMode};
use crate::nash::{solve_nash, verify_equilibrium};
use crate::pricing::{optimize_discriminatory, optimize_uniform, stackelberg_solve, StackelbergSolution};
use crate::table::{Format, Table};

#[derive(Debug, Parser)]
#[command(name = "edgechain", version, about = "Edge-compute pricing for proof-of-work miners")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct GlobalArgs {
    /// TOML or JSON configuration file.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Directory for result files; standard output when absent.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    format: Option<FormatArg>,
    /// Suppress progress messages.
    #[arg(long, global = true)]
    quiet: bool,
    /// Run on one thread.
    #[arg(long, global = true)]
    sequential: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum FormatArg {
    Csv,
    Json,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SchemeArg {
    Uniform,
    #[value(alias = "discriminatory")]
    Discrim,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModeArg {
    Analytic,
    Hash,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum FigureArg {
    Fig2b,
    Fig4,
    Fig5a,
    Fig5b,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Solve the miners' game at fixed prices.
    Nash {
        /// Comma-separated per-miner prices.
        #[arg(long, value_delimiter = ',', conflicts_with = "price")]
        prices: Option<Vec<f64>>,
        /// One price for every miner.
        #[arg(long)]
        price: Option<f64>,
    },
    /// Optimize the provider's prices under one scheme.
    Price {
        #[arg(long, value_enum)]
        scheme: SchemeArg,
    },
    /// Optimize both schemes and compare them.
    Stackelberg,
    /// Simulate mining races.
    Simulate {
        #[arg(long)]
        trials: Option<u64>,
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
        #[arg(long)]
        difficulty_bits: Option<u32>,
        /// Comma-separated miner demands.
        #[arg(long, value_delimiter = ',')]
        demands: Option<Vec<f64>>,
        #[arg(long)]
        outside_power: Option<f64>,
    },
    /// Regenerate one of the numerical studies.
    Sweep {
        #[arg(long, value_enum)]
        figure: FigureArg,
    },
    /// Check a configuration and exit.
    Validate,
}

const MINER_HEADER: [&str; 7] = [
    "miner_id",
    "block_size",
    "price",
    "demand",
    "utility",
    "win_prob",
    "binding",
];
const PRICE_HEADER: [&str; 8] = [
    "scheme",
    "miner_id",
    "block_size",
    "price",
    "demand",
    "utility",
    "provider_profit",
    "status",
];
const RACE_HEADER: [&str; 6] = ["miner_id", "demand", "wins", "empirical_prob", "analytic_prob", "ci95"];

struct Output {
    name: String,
    table: Table,
    sidecar: Option<serde_json::Value>,
}

impl Output {
    fn new(name: impl Into<String>, table: Table) -> Self {
        Self {
            name: name.into(),
            table,
            sidecar: None,
        }
    }
}

struct Run {
    config: Config,
    seed: u64,
    execution: Execution,
    quiet: bool,
}

impl Run {
    fn note(&self, msg: impl AsRef<str>) {
        if !self.quiet {
            eprintln!("{}", msg.as_ref());
        }
    }

    fn market(&self) -> Result<Market> {
        self.config.build_market(self.seed)
    }
}

/// Parses `argv` (program name first), runs the command and returns the
/// process exit status.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("edgechain: {e}");
            if e.is_domain() {
                1
            } else {
                2
            }
        }
    }
}

fn execute(cli: Cli) -> Result<()> {
    let g = cli.global;
    let mut config = match &g.config {
        Some(path) => load_config(path)?,
        None => Config::default(),
    };
    let env = std::env::var(SEED_ENV).ok();
    let seed = config.resolve_seed(g.seed, env.as_deref())?;
    let execution = if g.sequential {
        Execution::Sequential
    } else {
        Execution::Parallel
    };
    if g.sequential {
        config.pricing.execution = Execution::Sequential;
        config.simulate.execution = Execution::Sequential;
        config.sweep.execution = Execution::Sequential;
    }
    if let Some(f) = g.format {
        config.output.format = match f {
            FormatArg::Csv => Format::Csv,
            FormatArg::Json => Format::Json,
        };
    }
    let out_dir = g.out.clone().or_else(|| config.output.dir.clone());
    let format = config.output.format;
    let mut run = Run {
        config,
        seed,
        execution,
        quiet: g.quiet,
    };

    let outputs = match cli.command {
        Command::Validate => {
            run.note(match &g.config {
                Some(p) => format!("{}: ok", p.display()),
                None => "defaults: ok".to_owned(),
            });
            return Ok(());
        }
        Command::Nash { prices, price } => vec![nash(&run, prices, price)?],
        Command::Price { scheme } => vec![price(&run, scheme)?],
        Command::Stackelberg => vec![stackelberg(&run)?],
        Command::Simulate {
            trials,
            mode,
            difficulty_bits,
            demands,
            outside_power,
        } => {
            let s = &mut run.config.simulate;
            if let Some(t) = trials {
                s.trials = t;
            }
            if let Some(m) = mode {
                s.mode = match m {
                    ModeArg::Analytic => RaceMode::AnalyticRace,
                    ModeArg::Hash => RaceMode::HashRace,
                };
            }
            if let Some(d) = difficulty_bits {
                s.difficulty_bits = d;
            }
            if let Some(d) = demands {
                s.demands = d;
            }
            if let Some(q) = outside_power {
                s.outside_power = q;
            }
            vec![simulate(&run)?]
        }
        Command::Sweep { figure } => {
            let figure = match figure {
                FigureArg::Fig2b => Figure::Fig2b,
                FigureArg::Fig4 => Figure::Fig4,
                FigureArg::Fig5a => Figure::Fig5a,
                FigureArg::Fig5b => Figure::Fig5b,
            };
            vec![sweep(&run, figure)?]
        }
    };

    for output in outputs {
        emit(&run, &output, out_dir.as_deref(), format)?;
    }
    Ok(())
}

fn emit(run: &Run, output: &Output, dir: Option<&Path>, format: Format) -> Result<()> {
    let bytes = output.table.render(format)?;
    match dir {
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(&bytes)?;
            stdout.flush()?;
        }
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            let path = dir.join(format!("{}.{}", output.name, format.extension()));
            std::fs::write(&path, bytes)?;
            run.note(format!("wrote {}", path.display()));
            if let Some(meta) = &output.sidecar {
                let path = dir.join(format!("{}.meta.json", output.name));
                let mut text = serde_json::to_string_pretty(meta).map_err(|e| Error::Io(e.to_string()))?;
                text.push('\n');
                std::fs::write(&path, text)?;
                run.note(format!("wrote {}", path.display()));
            }
        }
    }
    Ok(())
}

fn nash(run: &Run, prices: Option<Vec<f64>>, price: Option<f64>) -> Result<Output> {
    let market = run.market()?;
    let n = market.len();
    let cfg = &run.config.nash;
    let prices = match (prices, price) {
        (Some(p), _) => p,
        (None, Some(p)) => vec![p; n],
        (None, None) => match (&cfg.prices, cfg.price) {
            (Some(p), _) => p.clone(),
            (None, Some(p)) => vec![p; n],
            (None, None) => {
                return Err(Error::invalid(
                    "nash.prices",
                    "give --prices, --price or a [nash] table",
                ))
            }
        },
    };
    if prices.len() != n {
        return Err(Error::invalid(
            "nash.prices",
            format!("expected {n} prices, one per miner, got {}", prices.len()),
        ));
    }
    let prices = PriceVector::discriminatory(prices);
    prices.validate(market.params())?;
    let report = solve_nash(&prices, &market, &run.config.solver)?;
    let check = verify_equilibrium(&report, &prices, &market, &run.config.solver);
    run.note(format!(
        "equilibrium: total demand {:.6}, kkt residual {:.3e}, verified {}",
        report.demands.total(),
        report.kkt_residual,
        check.passed
    ));
    let mut table = Table::new(&MINER_HEADER);
    for (i, m) in market.profiles().iter().enumerate() {
        table.push(vec![
            i.into(),
            m.block_size.into(),
            prices.prices[i].into(),
            report.demands.demands()[i].into(),
            report.utilities[i].into(),
            report.win_probs[i].into(),
            report.binding[i].name().into(),
        ]);
    }
    Ok(Output::new("nash", table))
}

fn push_solution(table: &mut Table, market: &Market, s: &StackelbergSolution, status: &str) {
    for (i, m) in market.profiles().iter().enumerate() {
        table.push(vec![
            s.scheme.name().into(),
            i.into(),
            m.block_size.into(),
            s.prices.prices[i].into(),
            s.equilibrium.demands.demands()[i].into(),
            s.equilibrium.utilities[i].into(),
            s.provider_profit.into(),
            status.into(),
        ]);
    }
}

fn price(run: &Run, scheme: SchemeArg) -> Result<Output> {
    let market = run.market()?;
    let (pricing, solver) = (&run.config.pricing, &run.config.solver);
    let solution = match scheme {
        SchemeArg::Uniform => optimize_uniform(&market, pricing, solver)?,
        SchemeArg::Discrim => optimize_discriminatory(&market, pricing, solver)?,
    };
    run.note(format!(
        "{} pricing: provider profit {:.6}, {} candidates",
        solution.scheme, solution.provider_profit, solution.candidates_evaluated
    ));
    let mut table = Table::new(&PRICE_HEADER);
    push_solution(&mut table, &market, &solution, "ok");
    Ok(Output::new(format!("price_{}", solution.scheme.name()), table))
}

fn stackelberg(run: &Run) -> Result<Output> {
    let market = run.market()?;
    let cmp = stackelberg_solve(&market, &run.config.pricing, &run.config.solver)?;
    let status = crate::experiments::audit(&cmp, &market, &run.config.solver, &run.config.pricing);
    run.note(format!(
        "provider profit: uniform {:.6}, discriminatory {:.6}, gain {:.6}",
        cmp.uniform.provider_profit, cmp.discriminatory.provider_profit, cmp.profit_gain
    ));
    let mut table = Table::new(&PRICE_HEADER);
    push_solution(&mut table, &market, &cmp.uniform, status);
    push_solution(&mut table, &market, &cmp.discriminatory, status);
    Ok(Output::new("stackelberg", table))
}

fn simulate(run: &Run) -> Result<Output> {
    let config = run.config.simulate.race(run.seed);
    let stats = simulate_race(&config)?;
    run.note(format!("simulated {} races with seed {}", stats.trials, stats.seed));
    let mut table = Table::new(&RACE_HEADER);
    for (i, &x) in config.demands.iter().enumerate() {
        table.push(vec![
            i.into(),
            x.into(),
            stats.win_counts[i].into(),
            stats.empirical_prob[i].into(),
            stats.analytic_prob[i].into(),
            stats.ci95[i].into(),
        ]);
    }
    if config.outside_power > 0.0 {
        let total = config.demands.iter().sum::<f64>() + config.outside_power;
        let p = stats.outside_wins as f64 / stats.trials as f64;
        table.push(vec![
            "outside".into(),
            config.outside_power.into(),
            stats.outside_wins.into(),
            p.into(),
            (config.outside_power / total).into(),
            crate::mining::binomial_ci95(p, stats.trials).into(),
        ]);
    }
    Ok(Output::new("simulate", table))
}

fn sweep(run: &Run, figure: Figure) -> Result<Output> {
    let mut spec = run.config.sweep.clone();
    spec.seed = run.seed;
    if run.execution == Execution::Sequential {
        spec.execution = Execution::Sequential;
    }
    let ctx = SweepContext {
        market: &run.config.market,
        solver: &run.config.solver,
        pricing: &run.config.pricing,
    };
    let table = run_sweep(figure, &spec, ctx)?;
    let failed = table
        .column("status")
        .map_or(0, |c| table.rows.iter().filter(|r| r[c] != "ok".into()).count());
    run.note(format!(
        "{}: {} rows, {} not ok",
        figure.name(),
        table.rows.len(),
        failed
    ));
    let meta = serde_json::to_value(metadata(figure, &spec, ctx)).map_err(|e| Error::Io(e.to_string()))?;
    Ok(Output {
        name: figure.name().to_owned(),
        table,
        sidecar: Some(meta),
    })
}
