//! Command line for the posted-price mechanism library.
//!
//! Subcommands: solve | price-table | simulate | experiment | check.
//! Output is CSV (default) or JSON; every run records its fully resolved
//! configuration and seed in the output header, and identical
//! configuration + seed reproduces identical bytes.

use std::fmt::Write as _;
use std::path::PathBuf;

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use postprice::analytics::k_star;
use postprice::checks;
use postprice::discounting::{DiscountFunction, DiscountKind};
use postprice::experiments::{self, ExperimentId, ExperimentSpec};
use postprice::mechanisms::{
    self, build_benchmark_iv, build_esoes_ss, build_mc_general, build_mc_lin, build_mpc,
    eq_t0_residual, mpc_from_nsub, t0_upper_bound, MarketParams, PricingStrategy,
};
use postprice::simulator::{monte_carlo_outcomes, monte_carlo_report};
use postprice::valuations::ValuationDistribution;

const SEED_ENV: &str = "POSTPRICE_SEED";
const DEFAULT_SEED: u64 = 42;

#[derive(Parser)]
#[command(name = "postprice", version, about = "Posted-price mechanisms under Poisson arrivals: construction, analytics, simulation, experiments")]
struct Cli {
    /// Cap the worker count; results are identical for any value.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Construct the optimal mechanism and print {t0, k, a, rho, t0_upper_bound}.
    Solve(SolveArgs),
    /// Dump a strategy's price curve as (t, price) rows.
    PriceTable(PriceTableArgs),
    /// Seeded Monte Carlo simulation of one strategy.
    Simulate(SimulateArgs),
    /// Run one of the four experiment sweeps.
    Experiment(ExperimentArgs),
    /// Run the invariant suite; exits nonzero if any check fails.
    Check(CheckArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum DiscountArg {
    Linear,
    #[value(name = "constant_one", alias = "constant-one")]
    ConstantOne,
}

impl DiscountArg {
    fn build(self, horizon: f64) -> anyhow::Result<DiscountFunction> {
        Ok(match self {
            DiscountArg::Linear => DiscountFunction::linear(horizon)?,
            DiscountArg::ConstantOne => DiscountFunction::constant_one(horizon)?,
        })
    }

    fn name(self) -> &'static str {
        match self {
            DiscountArg::Linear => "linear",
            DiscountArg::ConstantOne => "constant_one",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum FormatArg {
    Csv,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum MechanismArg {
    Benchmark,
    Mc,
    #[value(name = "mc_lin", alias = "mc-lin")]
    McLin,
    Mpc,
    #[value(name = "esoes_ss", alias = "esoes-ss")]
    EsoesSs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum DistArg {
    Point,
    Uniform,
    #[value(name = "truncated_normal", alias = "truncated-normal")]
    TruncatedNormal,
}

#[derive(Args, Debug)]
struct MarketArgs {
    /// Poisson arrival rate (agents per unit time).
    #[arg(long)]
    lambda: f64,
    /// Selling horizon.
    #[arg(long = "T")]
    horizon: f64,
    /// Valuation range ratio v_max / v_min.
    #[arg(long)]
    h: f64,
    #[arg(long, value_enum, default_value = "linear")]
    discount: DiscountArg,
}

impl MarketArgs {
    fn params(&self) -> anyhow::Result<MarketParams> {
        Ok(MarketParams::new(self.lambda, self.horizon, self.h)?)
    }

    fn config(&self) -> serde_json::Value {
        json!({
            "lambda": self.lambda,
            "T": self.horizon,
            "h": self.h,
            "discount": { "kind": self.discount.name(), "T": self.horizon },
        })
    }
}

#[derive(Args, Debug)]
struct OutputArgs {
    #[arg(long, value_enum, default_value = "csv")]
    format: FormatArg,
    /// Write to a file instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SolveArgs {
    #[command(flatten)]
    market: MarketArgs,
    /// Also evaluate the random-valuation lower bound at this epsilon
    /// (kappa is measured at tau = T^(1-eps) lambda^(-eps)).
    #[arg(long)]
    epsilon: Option<f64>,
    /// With --epsilon: additionally bound the piecewise-constant mechanism
    /// with this ladder base.
    #[arg(long)]
    delta: Option<f64>,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Args, Debug)]
struct StrategyArgs {
    #[arg(long, value_enum)]
    mechanism: MechanismArg,
    /// Benchmark valuation (benchmark only).
    #[arg(long)]
    v: Option<f64>,
    /// Price ladder base for mpc / esoes-ss.
    #[arg(long)]
    delta: Option<f64>,
    /// Number of sub-intervals for mpc (sets delta = h^(1/nsub)).
    #[arg(long)]
    nsub: Option<usize>,
    /// Switch time override for mpc; defaults to the continuous mechanism's.
    #[arg(long)]
    t0: Option<f64>,
}

impl StrategyArgs {
    fn config(&self) -> serde_json::Value {
        json!({
            "mechanism": match self.mechanism {
                MechanismArg::Benchmark => "benchmark",
                MechanismArg::Mc => "mc",
                MechanismArg::McLin => "mc_lin",
                MechanismArg::Mpc => "mpc",
                MechanismArg::EsoesSs => "esoes_ss",
            },
            "v": self.v,
            "delta": self.delta,
            "nsub": self.nsub,
            "t0": self.t0,
        })
    }
}

#[derive(Args, Debug)]
struct PriceTableArgs {
    #[command(flatten)]
    market: MarketArgs,
    #[command(flatten)]
    strategy: StrategyArgs,
    /// Number of grid points.
    #[arg(long, default_value_t = 512)]
    grid: usize,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[command(flatten)]
    market: MarketArgs,
    #[command(flatten)]
    strategy: StrategyArgs,
    #[arg(long, value_enum, default_value = "uniform")]
    dist: DistArg,
    /// Truncated normal mean; defaults to (h-1)/2.
    #[arg(long)]
    mu: Option<f64>,
    /// Truncated normal variance.
    #[arg(long, default_value_t = 2.0)]
    sigma2: f64,
    #[arg(long = "n-runs", default_value_t = 1000)]
    n_runs: usize,
    #[arg(long)]
    seed: Option<u64>,
    /// Also emit per-run rows (run_index, revenue, sale_time, buyer_index).
    #[arg(long)]
    dump_runs: bool,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Args, Debug)]
struct ExperimentArgs {
    /// result1 | result2 | result3 | result4
    #[arg(long)]
    id: String,
    /// Use the full reference grids instead of the desk-scale defaults.
    #[arg(long)]
    full: bool,
    #[arg(long)]
    h: Option<f64>,
    #[arg(long = "n-runs")]
    n_runs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Args, Debug)]
struct CheckArgs {
    #[command(flatten)]
    output: OutputArgs,
}

fn main() {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        // Determinism never depends on this; it only caps parallel workers.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let outcome = match cli.command {
        Command::Solve(args) => cmd_solve(args),
        Command::PriceTable(args) => cmd_price_table(args),
        Command::Simulate(args) => cmd_simulate(args),
        Command::Experiment(args) => cmd_experiment(args),
        Command::Check(args) => cmd_check(args),
    };
    if let Err(err) = outcome {
        eprintln!("error: {err:#}");
        std::process::exit(1);
    }
}

fn resolve_seed(flag: Option<u64>) -> u64 {
    flag.or_else(|| std::env::var(SEED_ENV).ok().and_then(|s| s.parse().ok()))
        .unwrap_or(DEFAULT_SEED)
}

fn emit(output: &OutputArgs, content: String) -> anyhow::Result<()> {
    match &output.out {
        Some(path) => std::fs::write(path, content)
            .with_context(|| format!("writing {}", path.display()))?,
        None => print!("{content}"),
    }
    Ok(())
}

/// CSV payload preceded by the resolved-config comment line.
fn csv_document(config: &serde_json::Value, body: &str) -> String {
    format!("# config {config}\n{body}")
}

fn build_strategy(
    params: &MarketParams,
    discount: &DiscountFunction,
    args: &StrategyArgs,
) -> anyhow::Result<PricingStrategy> {
    let mc = || -> anyhow::Result<PricingStrategy> {
        Ok(match discount.kind() {
            DiscountKind::Linear => build_mc_lin(params)?,
            _ => build_mc_general(params, discount)?,
        })
    };
    Ok(match args.mechanism {
        MechanismArg::Benchmark => {
            let v = args.v.ok_or_else(|| anyhow!("--mechanism benchmark requires --v"))?;
            build_benchmark_iv(params, discount, v)?
        }
        MechanismArg::Mc => mc()?,
        MechanismArg::McLin => {
            if discount.kind() != DiscountKind::Linear {
                bail!("--mechanism mc-lin requires --discount linear");
            }
            build_mc_lin(params)?
        }
        MechanismArg::Mpc => {
            let t0 = match args.t0 {
                Some(t0) => t0,
                None => mc()?.mc_meta().expect("continuous mechanism carries meta").t0,
            };
            match (args.nsub, args.delta) {
                (Some(n), None) => mpc_from_nsub(params, discount, n, t0)?,
                (None, Some(d)) => build_mpc(params, discount, d, t0)?,
                (None, None) => build_mpc(params, discount, 2.0, t0)?,
                (Some(_), Some(_)) => bail!("--nsub and --delta are mutually exclusive"),
            }
        }
        MechanismArg::EsoesSs => build_esoes_ss(params, args.delta.unwrap_or(2.0))?,
    })
}

fn cmd_solve(args: SolveArgs) -> anyhow::Result<()> {
    let params = args.market.params()?;
    let discount = args.market.discount.build(params.horizon)?;
    let strategy = match args.market.discount {
        DiscountArg::Linear => build_mc_lin(&params)?,
        DiscountArg::ConstantOne => build_mc_general(&params, &discount)?,
    };
    let meta = strategy.mc_meta().expect("continuous mechanism carries meta");
    let rho = mechanisms::competitive_ratio_mc(meta, &params)?;
    let ks = k_star(&params, &discount)?;
    let residual = match args.market.discount {
        DiscountArg::Linear => Some(eq_t0_residual(&params, meta.t0)),
        DiscountArg::ConstantOne => None,
    };
    let bounds = match args.epsilon {
        Some(epsilon) => {
            let probe = mechanisms::lower_bound_mc(meta, &params, epsilon, 1.0)?;
            let kappa = mechanisms::kappa_tau(&strategy, probe.tau, 4096)?;
            let mc_bound = mechanisms::lower_bound_mc(meta, &params, epsilon, kappa)?;
            let mpc_bound = match args.delta {
                Some(delta) => {
                    let mpc = build_mpc(&params, &discount, delta, meta.t0)?;
                    Some(mechanisms::lower_bound_mpc(
                        mpc.mpc_meta().expect("mpc carries meta"),
                        &params,
                        &discount,
                        epsilon,
                    )?)
                }
                None => None,
            };
            Some((epsilon, kappa, mc_bound, mpc_bound))
        }
        None => None,
    };

    let mut config = args.market.config();
    if let Some(e) = args.epsilon {
        config["epsilon"] = json!(e);
    }
    if let Some(d) = args.delta {
        config["delta"] = json!(d);
    }
    match args.output.format {
        FormatArg::Json => {
            let mut doc = json!({
                "config": config,
                "t0": meta.t0,
                "k": meta.k,
                "a": meta.a,
                "rho": rho,
                "k_star": ks,
                "t0_upper_bound": t0_upper_bound(&params),
            });
            if let Some(r) = residual {
                doc["eq_t0_residual"] = json!(r);
            }
            if let Some((epsilon, kappa, mc_bound, mpc_bound)) = &bounds {
                doc["epsilon"] = json!(epsilon);
                doc["kappa_tau"] = json!(kappa);
                doc["lower_bound_mc"] = serde_json::to_value(mc_bound)?;
                if let Some(b) = mpc_bound {
                    doc["lower_bound_mpc"] = serde_json::to_value(b)?;
                }
            }
            emit(&args.output, format!("{}\n", serde_json::to_string_pretty(&doc)?))
        }
        FormatArg::Csv => {
            let mut body = String::from("quantity,value\n");
            let _ = writeln!(body, "t0,{}", meta.t0);
            let _ = writeln!(body, "k,{}", meta.k);
            let _ = writeln!(body, "a,{}", meta.a);
            let _ = writeln!(body, "rho,{rho}");
            let _ = writeln!(body, "k_star,{ks}");
            let _ = writeln!(body, "t0_upper_bound,{}", t0_upper_bound(&params));
            if let Some(r) = residual {
                let _ = writeln!(body, "eq_t0_residual,{r:e}");
            }
            if let Some((epsilon, kappa, mc_bound, mpc_bound)) = &bounds {
                let _ = writeln!(body, "epsilon,{epsilon}");
                let _ = writeln!(body, "kappa_tau,{kappa}");
                let _ = writeln!(body, "tau,{}", mc_bound.tau);
                let _ = writeln!(body, "lower_bound_mc,{}", mc_bound.value);
                if let Some(b) = mpc_bound {
                    let _ = writeln!(body, "lower_bound_mpc,{}", b.value);
                }
            }
            emit(&args.output, csv_document(&config, &body))
        }
    }
}

fn cmd_price_table(args: PriceTableArgs) -> anyhow::Result<()> {
    if args.grid < 2 {
        bail!("--grid must be at least 2");
    }
    let params = args.market.params()?;
    let discount = args.market.discount.build(params.horizon)?;
    let strategy = build_strategy(&params, &discount, &args.strategy)?;
    if !strategy.is_time_indexed() {
        bail!("esoes-ss prices by arrival index, not time; use `simulate` instead");
    }
    let meta = strategy.metadata();
    let mut config = args.market.config();
    config["strategy"] = args.strategy.config();
    config["grid"] = json!(args.grid);

    let rows: Vec<(f64, f64)> = (0..args.grid)
        .map(|i| {
            let t = params.horizon * i as f64 / (args.grid - 1) as f64;
            (t, strategy.price_at(t))
        })
        .collect();

    match args.output.format {
        FormatArg::Json => {
            let doc = json!({
                "config": config,
                "meta": meta,
                "rows": rows.iter().map(|&(t, p)| json!({"t": t, "price": p})).collect::<Vec<_>>(),
            });
            emit(&args.output, format!("{}\n", serde_json::to_string_pretty(&doc)?))
        }
        FormatArg::Csv => {
            let mut body = String::from("t,price\n");
            for (t, p) in rows {
                let _ = writeln!(body, "{t:.9},{p:.9}");
            }
            let mut doc = format!("# meta {}\n", serde_json::to_string(&meta)?);
            doc.insert_str(0, &format!("# config {config}\n"));
            doc.push_str(&body);
            emit(&args.output, doc)
        }
    }
}

fn cmd_simulate(args: SimulateArgs) -> anyhow::Result<()> {
    let params = args.market.params()?;
    let discount = args.market.discount.build(params.horizon)?;
    let strategy = build_strategy(&params, &discount, &args.strategy)?;
    let dist = match args.dist {
        DistArg::Point => {
            let v = args.strategy.v.ok_or_else(|| anyhow!("--dist point requires --v"))?;
            ValuationDistribution::point(v, params.h)?
        }
        DistArg::Uniform => ValuationDistribution::uniform(params.h)?,
        DistArg::TruncatedNormal => {
            let mu = args.mu.unwrap_or((params.h - 1.0) / 2.0);
            ValuationDistribution::truncated_normal(mu, args.sigma2, params.h)?
        }
    };
    let seed = resolve_seed(args.seed);
    let report =
        monte_carlo_report(&strategy, &params, &dist, &discount, args.n_runs, seed, false)?;

    let mut config = args.market.config();
    config["strategy"] = args.strategy.config();
    config["valuation"] = json!({
        "kind": match args.dist {
            DistArg::Point => "point",
            DistArg::Uniform => "uniform",
            DistArg::TruncatedNormal => "truncated_normal",
        },
        "h": params.h,
        "v": args.strategy.v,
        "mu": args.mu,
        "sigma2": if args.dist == DistArg::TruncatedNormal { Some(args.sigma2) } else { None },
    });
    config["n_runs"] = json!(args.n_runs);
    config["seed"] = json!(seed);

    match args.output.format {
        FormatArg::Json => {
            let mut doc = json!({ "config": config, "report": report });
            if args.dump_runs {
                let outcomes =
                    monte_carlo_outcomes(&strategy, &params, &dist, &discount, args.n_runs, seed);
                doc["runs"] = serde_json::to_value(&outcomes)?;
            }
            emit(&args.output, format!("{}\n", serde_json::to_string_pretty(&doc)?))
        }
        FormatArg::Csv => {
            let mut body = String::new();
            if args.dump_runs {
                body.push_str("run_index,revenue,sale_time,buyer_index\n");
                let outcomes =
                    monte_carlo_outcomes(&strategy, &params, &dist, &discount, args.n_runs, seed);
                for (i, o) in outcomes.iter().enumerate() {
                    let _ = writeln!(
                        body,
                        "{},{:.9},{},{}",
                        i,
                        o.revenue(),
                        o.sale_time.map(|t| format!("{t:.9}")).unwrap_or_default(),
                        o.buyer_index.map(|b| b.to_string()).unwrap_or_default(),
                    );
                }
            } else {
                body.push_str("n_runs,mean_revenue,std_error,sell_rate,normalized_mean,seed\n");
                let _ = writeln!(
                    body,
                    "{},{:.9},{:.9},{:.6},{:.9},{}",
                    report.n_runs,
                    report.mean_revenue,
                    report.std_error,
                    report.sell_rate,
                    report.normalized_mean,
                    report.seed,
                );
            }
            let mut doc = csv_document(&config, &body);
            let summary = format!("# report {}\n", serde_json::to_string(&report)?);
            let insert_at = doc.find('\n').map(|i| i + 1).unwrap_or(0);
            doc.insert_str(insert_at, &summary);
            emit(&args.output, doc)
        }
    }
}

fn cmd_experiment(args: ExperimentArgs) -> anyhow::Result<()> {
    let id = ExperimentId::parse(&args.id)?;
    let seed = resolve_seed(args.seed);
    let mut spec =
        if args.full { ExperimentSpec::full(id, seed) } else { ExperimentSpec::desk(id, seed) };
    if let Some(h) = args.h {
        spec.h = h;
    }
    if let Some(n) = args.n_runs {
        spec.n_runs = n;
    }
    let table = experiments::run(&spec)?;
    for note in &table.notes {
        eprintln!("note: {note}");
    }
    let config = serde_json::to_value(&spec)?;
    match args.output.format {
        FormatArg::Json => {
            let doc = json!({
                "config": config,
                "rows": table.rows,
                "notes": table.notes,
            });
            emit(&args.output, format!("{}\n", serde_json::to_string_pretty(&doc)?))
        }
        FormatArg::Csv => emit(&args.output, csv_document(&config, &table.to_csv())),
    }
}

fn cmd_check(args: CheckArgs) -> anyhow::Result<()> {
    let outcomes = checks::run_all();
    let failed = outcomes.iter().filter(|o| !o.passed).count();
    match args.output.format {
        FormatArg::Json => {
            let doc = json!({
                "checks": outcomes.iter().map(|o| json!({
                    "name": o.name,
                    "passed": o.passed,
                    "detail": o.detail,
                })).collect::<Vec<_>>(),
                "passed": outcomes.len() - failed,
                "failed": failed,
            });
            emit(&args.output, format!("{}\n", serde_json::to_string_pretty(&doc)?))?;
        }
        FormatArg::Csv => {
            let mut body = String::new();
            for o in &outcomes {
                if o.passed {
                    let _ = writeln!(body, "PASS {}", o.name);
                } else {
                    let _ = writeln!(body, "FAIL {}: {}", o.name, o.detail);
                }
            }
            let _ = writeln!(body, "{} passed, {} failed", outcomes.len() - failed, failed);
            emit(&args.output, body)?;
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
    Ok(())
}
