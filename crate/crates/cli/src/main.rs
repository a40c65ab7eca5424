//! `repomech` command-line front end.
//!
//! Each subcommand runs the pipeline up to one stage, prints aligned text
//! tables to stdout and, when an output directory is given, writes the same
//! data as pretty JSON. Exit codes: 0 success, 1 validation failure, 2
//! malformed configuration or missing files.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use repomech::accounting::{positions, AccountingOptions, EndNodePolicy, FmvPosting, SlrState};
use repomech::econ::{
    dealer_optimal_rate, sample_curves, slr_rate_sensitivity, write_curves_csv, write_trace_csv, DealerParams,
    HedgeFundParams, MmfParams,
};
use repomech::fixed::{Decimal4, Money, Price};
use repomech::generate::generate_book;
use repomech::ingest::{read_book, write_csv, IngestError};
use repomech::network::{NetworkError, SplitPolicy};
use repomech::pipeline::{
    accounting_rows, ccp_comparison, contract_view, run_pipeline, run_scenario, run_stages, to_json, write_bundle,
    DecompositionView, PipelineConfig, PipelineError, Scenario, Stages,
};
use repomech::report;
use repomech::settlement::{ContractStatus, MarginInputs};
use repomech::trade::RepoTrade;

#[derive(Parser)]
#[command(name = "repomech", version, about = "Multilateral netting of repo second-leg trades")]
struct Cli {
    /// Directory for JSON outputs.
    #[arg(long, global = true, env = "REPOMECH_OUTPUT_DIR")]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a trade book against the trade invariants.
    Validate(InputArgs),
    /// Net each agent pair into one directed edge.
    Net(InputArgs),
    /// Split agents into excess and matched-trade nodes.
    Split(BookArgs),
    /// Decompose the trade flow network into chains and cycles.
    Decompose(BookArgs),
    /// Net obligations and margin for every replacement contract.
    Contracts {
        #[command(flatten)]
        book: BookArgs,
        #[command(flatten)]
        margin: MarginArgs,
    },
    /// Replay a sequence of nonperformance events.
    DefaultSim {
        #[arg(long)]
        scenario: PathBuf,
        /// Overrides the scenario's book.
        #[arg(long)]
        input: Option<PathBuf>,
        /// Overrides the scenario's split policy.
        #[arg(long)]
        policy: Option<String>,
    },
    /// Balance-sheet deltas under each accounting regime.
    Account {
        #[command(flatten)]
        book: BookArgs,
        #[command(flatten)]
        acct: AccountingArgs,
    },
    /// Compare RepoMech with central clearing agent by agent.
    CompareCcp {
        #[command(flatten)]
        book: BookArgs,
        #[command(flatten)]
        acct: AccountingArgs,
    },
    /// Sample the supply and demand curves and solve the dealer problem.
    Econ(EconArgs),
    /// Write a reproducible random book as CSV.
    Generate {
        #[arg(long)]
        seed: u64,
        #[arg(long, default_value_t = 5)]
        agents: usize,
        #[arg(long, default_value_t = 20)]
        trades: usize,
        /// Output file; stdout if absent.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Run every stage and write the full report bundle.
    Run {
        #[command(flatten)]
        book: BookArgs,
        #[command(flatten)]
        margin: MarginArgs,
        #[command(flatten)]
        acct: AccountingArgs,
    },
}

#[derive(Args)]
struct InputArgs {
    /// Trade book, CSV or JSON.
    #[arg(long)]
    input: PathBuf,
}

#[derive(Args)]
struct BookArgs {
    #[command(flatten)]
    input: InputArgs,
    /// `ascending` or `explicit:<file>`.
    #[arg(long, default_value = "ascending")]
    policy: String,
}

#[derive(Args)]
struct MarginArgs {
    /// Security price change for margin.
    #[arg(long, default_value = "0")]
    delta_price: Price,
    #[arg(long, default_value = "0")]
    delta_vol: Decimal4,
    #[arg(long, default_value = "0")]
    vol_coeff: Decimal4,
}

impl MarginArgs {
    fn inputs(&self) -> MarginInputs {
        MarginInputs {
            delta_price: self.delta_price,
            delta_vol: self.delta_vol,
            vol_coeff: self.vol_coeff,
        }
    }
}

#[derive(Args)]
struct AccountingArgs {
    /// `secured_financing` or `final_sale_derivative`.
    #[arg(long, default_value = "secured_financing")]
    end_node: EndNodePolicy,
    #[arg(long, default_value = "0", allow_hyphen_values = true)]
    fmv_adjustment: Money,
    /// `signed` (fair value on the asset side) or `by_sign` (negative fair
    /// value as a liability).
    #[arg(long, default_value = "signed")]
    fmv_posting: FmvPosting,
    /// Optional security mark for haircut display.
    #[arg(long)]
    market_price: Option<Price>,
    /// Clearing fee per novated unit.
    #[arg(long)]
    fee: Option<Price>,
    /// SLR inputs; all four are required to enable the check.
    #[arg(long, requires_all = ["assets", "exposures", "floor"])]
    capital: Option<Money>,
    #[arg(long)]
    assets: Option<Money>,
    #[arg(long)]
    exposures: Option<Money>,
    #[arg(long)]
    floor: Option<Decimal4>,
}

impl AccountingArgs {
    fn apply(&self, config: &mut PipelineConfig) {
        config.accounting = AccountingOptions {
            end_node: self.end_node,
            fmv_adjustment: self.fmv_adjustment,
            posting: self.fmv_posting,
        };
        config.market_price = self.market_price;
        config.fee_per_unit = self.fee;
        config.slr = match (self.capital, self.assets, self.exposures, self.floor) {
            (Some(capital), Some(assets), Some(exposures), Some(floor)) => Some(SlrState {
                capital,
                assets,
                exposures,
                floor,
            }),
            _ => None,
        };
    }
}

#[derive(Args)]
struct EconArgs {
    #[arg(long, default_value_t = 0.1)]
    alpha: f64,
    #[arg(long, default_value_t = 1.0)]
    gamma_sigma2: f64,
    #[arg(long, default_value_t = 0.0)]
    k: f64,
    #[arg(long, default_value_t = 1.0)]
    m: f64,
    #[arg(long, default_value_t = 1.0)]
    a: f64,
    #[arg(long, default_value_t = 1.0)]
    b: f64,
    #[arg(long, default_value_t = 0.0)]
    r0: f64,
    #[arg(long, default_value_t = 1.0)]
    r_int: f64,
    #[arg(long, default_value_t = 0.4)]
    c: f64,
    #[arg(long, default_value_t = 0.05)]
    floor: f64,
    #[arg(long, default_value_t = 0.1)]
    d_bar: f64,
    /// Number of curve samples.
    #[arg(long, default_value_t = 101)]
    samples: usize,
}

/// Failure classes mapped to exit codes.
enum Failure {
    Validation(anyhow::Error),
    Config(anyhow::Error),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Validation(_) => 1,
            Failure::Config(_) => 2,
        }
    }
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Network(NetworkError::InvalidAssignment { .. } | NetworkError::UnknownAgent(_)) => {
                Failure::Config(e.into())
            }
            PipelineError::Slr(_) => Failure::Config(e.into()),
            other => Failure::Validation(other.into()),
        }
    }
}

type CliResult<T> = Result<T, Failure>;

fn config_err(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Config(e.into())
}

fn load_book(path: &Path) -> CliResult<Vec<RepoTrade>> {
    read_book(path).map_err(|e| {
        let missing = matches!(e, IngestError::Io(_));
        let e = anyhow::Error::new(e).context(format!("reading {}", path.display()));
        if missing {
            Failure::Config(e)
        } else {
            Failure::Validation(e)
        }
    })
}

/// Parses `ascending` or `explicit:<file>`; relative files resolve against `base`.
fn parse_policy(text: &str, base: &Path) -> CliResult<SplitPolicy> {
    match text.split_once(':') {
        None if text == "ascending" => Ok(SplitPolicy::default()),
        Some(("explicit", file)) => {
            let path = base.join(file);
            let text = std::fs::read_to_string(&path)
                .with_context(|| format!("reading assignment {}", path.display()))
                .map_err(Failure::Config)?;
            SplitPolicy::from_json(&text)
                .with_context(|| format!("parsing assignment {}", path.display()))
                .map_err(Failure::Config)
        }
        _ => Err(config_err(anyhow!(
            "unknown policy {text:?}; expected ascending or explicit:<file>"
        ))),
    }
}

fn stages(book: &BookArgs) -> CliResult<Stages> {
    let trades = load_book(&book.input.input)?;
    let policy = parse_policy(&book.policy, Path::new("."))?;
    Ok(run_stages(trades, &policy)?)
}

/// Prints `text` and writes `value` to `<out>/<name>.json` when an output
/// directory is set.
fn emit<T: Serialize>(out: Option<&Path>, name: &str, value: &T, text: &str) -> CliResult<()> {
    print!("{text}");
    if let Some(dir) = out {
        std::fs::create_dir_all(dir)
            .and_then(|_| std::fs::write(dir.join(format!("{name}.json")), to_json(value)))
            .with_context(|| format!("writing {}", dir.display()))
            .map_err(Failure::Config)?;
    }
    Ok(())
}

fn econ(args: &EconArgs, out: Option<&Path>) -> CliResult<()> {
    let hf = HedgeFundParams {
        alpha: args.alpha,
        gamma_sigma2: args.gamma_sigma2,
        k: args.k,
        m: args.m,
    };
    let mmf = MmfParams {
        a: args.a,
        b: args.b,
        r0: args.r0,
    };
    let dealer = DealerParams {
        r_int: args.r_int,
        c: args.c,
        floor: args.floor,
        d_bar: args.d_bar,
        demand: mmf,
    };
    hf.validate().map_err(config_err)?;
    let opt = dealer_optimal_rate(&dealer).map_err(config_err)?;
    let curves = sample_curves(&hf, &mmf, mmf.r0, args.r_int, args.samples);
    let sensitivity = slr_rate_sensitivity(&dealer, 1e-4).ok();
    println!(
        "r* = {:.10}  volume = {:.10}  profit = {:.10}  constrained = {}",
        opt.r_star, opt.volume, opt.profit, opt.constrained
    );
    match sensitivity {
        Some(s) => println!("dr*/dfloor = {s:.10}"),
        None => println!("dr*/dfloor = - (capacity constraint not binding)"),
    }
    let dir = match out {
        Some(dir) => dir,
        None => {
            let mut buf = Vec::new();
            write_curves_csv(&mut buf, &curves).map_err(config_err)?;
            print!("\n{}", String::from_utf8_lossy(&buf));
            return Ok(());
        }
    };
    let write = |name: &str, f: &dyn Fn(std::fs::File) -> csv::Result<()>| -> CliResult<()> {
        let path = dir.join(name);
        let file = std::fs::File::create(&path)
            .with_context(|| format!("creating {}", path.display()))
            .map_err(Failure::Config)?;
        f(file).map_err(config_err)
    };
    std::fs::create_dir_all(dir).map_err(config_err)?;
    write("curves.csv", &|f| write_curves_csv(f, &curves))?;
    write("trace.csv", &|f| write_trace_csv(f, &opt.trace))?;
    std::fs::write(dir.join("optimum.json"), to_json(&opt)).map_err(config_err)?;
    Ok(())
}

fn run(cli: Cli) -> CliResult<()> {
    let out = cli.out.as_deref();
    match cli.command {
        Command::Validate(args) => {
            let trades = load_book(&args.input)?;
            let book = repomech::trade::validate_book(trades).map_err(|e| Failure::Validation(e.into()))?;
            println!("ok: {} trades, {} agents", book.len(), book.agents().len());
        }
        Command::Net(args) => {
            let st = run_stages(load_book(&args.input)?, &SplitPolicy::default())?;
            emit(out, "netted", &st.netting, &report::netting(&st.netting))?;
        }
        Command::Split(book) => {
            let st = stages(&book)?;
            emit(out, "tfn", &st.tfn, &report::tfn(&st.tfn))?;
        }
        Command::Decompose(book) => {
            let st = stages(&book)?;
            let view = DecompositionView::from(&st.decomposition);
            emit(out, "decomposition", &view, &report::decomposition(&view))?;
        }
        Command::Contracts { book, margin } => {
            let st = stages(&book)?;
            let list: Vec<_> = st
                .decomposition
                .structures()
                .map(|s| contract_view(s, ContractStatus::Active, margin.inputs()))
                .collect();
            emit(out, "contracts", &list, &report::contracts(&list))?;
        }
        Command::DefaultSim {
            scenario,
            input,
            policy,
        } => {
            let text = std::fs::read_to_string(&scenario)
                .with_context(|| format!("reading scenario {}", scenario.display()))
                .map_err(Failure::Config)?;
            let sc: Scenario = serde_json::from_str(&text)
                .with_context(|| format!("parsing scenario {}", scenario.display()))
                .map_err(Failure::Config)?;
            let base = scenario.parent().unwrap_or(Path::new("."));
            let book_path = match (input, &sc.input) {
                (Some(p), _) => p,
                (None, Some(p)) => base.join(p),
                (None, None) => return Err(config_err(anyhow!("scenario names no input book; pass --input"))),
            };
            let policy = match (policy, &sc.policy) {
                (Some(p), _) => parse_policy(&p, Path::new("."))?,
                (None, Some(p)) => parse_policy(p, base)?,
                (None, None) => SplitPolicy::default(),
            };
            let st = run_stages(load_book(&book_path)?, &policy)?;
            let rep = run_scenario(&st.decomposition, &sc.events, sc.margin)?;
            emit(out, "scenario", &rep, &report::scenario(&rep))?;
        }
        Command::Account { book, acct } => {
            let mut config = PipelineConfig::default();
            acct.apply(&mut config);
            let st = stages(&book)?;
            let rows = accounting_rows(&positions(&st.decomposition), &config)?;
            emit(out, "accounting", &rows, &report::accounting(&rows))?;
        }
        Command::CompareCcp { book, acct } => {
            let mut config = PipelineConfig::default();
            acct.apply(&mut config);
            let st = stages(&book)?;
            let cmp = ccp_comparison(&st.tfn, &st.decomposition, &config);
            emit(out, "ccp", &cmp, &report::ccp(&cmp))?;
        }
        Command::Econ(args) => econ(&args, out)?,
        Command::Generate {
            seed,
            agents,
            trades,
            output,
        } => {
            let book = generate_book(seed, agents, trades).map_err(config_err)?;
            let result = match output {
                Some(path) => std::fs::File::create(&path)
                    .map_err(IngestError::from)
                    .and_then(|f| write_csv(f, &book)),
                None => write_csv(std::io::stdout().lock(), &book),
            };
            result.map_err(config_err)?;
        }
        Command::Run { book, margin, acct } => {
            let mut config = PipelineConfig {
                policy: parse_policy(&book.policy, Path::new("."))?,
                margin: margin.inputs(),
                ..Default::default()
            };
            acct.apply(&mut config);
            let rep = run_pipeline(load_book(&book.input.input)?, &config)?;
            print!("{}", report::decomposition(&rep.decomposition));
            print!("{}", report::contracts(&rep.contracts));
            if let Some(dir) = out {
                let files = write_bundle(&rep, dir)
                    .with_context(|| format!("writing {}", dir.display()))
                    .map_err(Failure::Config)?;
                eprintln!("wrote {} files to {}", files.len(), dir.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let code = f.code();
            let (Failure::Validation(e) | Failure::Config(e)) = f;
            eprintln!("error: {e:#}");
            ExitCode::from(code)
        }
    }
}
