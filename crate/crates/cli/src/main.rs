mod config;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use dyadic_core::bounds::bounds_report;
use dyadic_core::cubature::{
    admissible_volatility, build_chain, builtin_formula, calibrate_drift, martingale_residual,
    mod2_recombination_analysis,
};
use dyadic_core::lattice::{detect_embedding, dyadic_sequence, node_growth, price_many};
use dyadic_core::numeric::steps_in;
use dyadic_core::verify::{exit_code, report_text, run_suites, write_report, Suite};
use serde_json::json;

use crate::config::{parse_levels, ChainBlock, Resolved};

#[derive(Parser)]
#[command(name = "dyadic", version, about = "Bermudan pricing on recombining lattices with dyadic error bounds")]
struct Cli {
    /// Cap on worker threads.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Dyadic levels `M..N`, overriding the config.
    #[arg(long, value_parser = parse_levels)]
    levels: Option<(u32, u32)>,
    /// Output directory, overriding the config.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Value the option at the grid points.
    Price {
        #[command(flatten)]
        common: Common,
        /// Exercise dates; defaults to the config, then `2^N`.
        #[arg(long)]
        dates: Option<usize>,
    },
    /// Dyadic sequence `V_M..V_N` as CSV.
    Refine {
        #[command(flatten)]
        common: Common,
    },
    /// Error-bound constants.
    Bounds {
        #[command(flatten)]
        common: Common,
    },
    /// Run verification suites.
    Verify {
        #[command(flatten)]
        common: Common,
        /// Suite to run; repeat or separate with commas. Defaults to the config, then all.
        #[arg(long, value_delimiter = ',')]
        suite: Vec<Suite>,
        /// Quadrature spacing.
        #[arg(long)]
        dx: Option<f64>,
    },
    /// Node growth of the lattice and the mod-2 structure of the formula.
    LatticeStats {
        #[command(flatten)]
        common: Common,
        /// Largest step count; defaults to `T/h`.
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Martingale drift, residual and admissible volatility.
    Calibrate {
        /// TOML run configuration with a cubature chain.
        #[arg(long, conflicts_with = "formula")]
        config: Option<PathBuf>,
        /// Builtin formula name.
        #[arg(long, requires_all = ["r", "sigma", "h"])]
        formula: Option<String>,
        #[arg(long)]
        r: Option<f64>,
        #[arg(long, default_value_t = 0.0)]
        delta: f64,
        /// Volatility per coordinate, comma separated.
        #[arg(long, value_delimiter = ',')]
        sigma: Option<Vec<f64>>,
        #[arg(long)]
        h: Option<f64>,
    },
}

enum Outcome {
    Done,
    ChecksFailed,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(k) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(k).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    match run(cli.command) {
        Ok(Outcome::Done) => ExitCode::SUCCESS,
        Ok(Outcome::ChecksFailed) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn open(common: &Common) -> Result<(Resolved, Option<PathBuf>)> {
    let file = config::load(&common.config)?;
    let out = common.out.clone().or_else(|| file.out.clone());
    Ok((config::resolve(file, common.levels)?, out))
}

fn emit(out: Option<&Path>, name: &str, text: &str) -> Result<()> {
    if let Some(dir) = out {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        fs::write(dir.join(name), text).with_context(|| format!("writing {name}"))?;
    }
    Ok(())
}

fn fmt_point(x: &[f64]) -> String {
    x.iter().map(|v| format!("{v}")).collect::<Vec<_>>().join(",")
}

fn x_header(d: usize) -> String {
    if d == 1 {
        "x".into()
    } else {
        (1..=d).map(|j| format!("x{j}")).collect::<Vec<_>>().join(",")
    }
}

fn run(cmd: Command) -> Result<Outcome> {
    match cmd {
        Command::Price { common, dates } => {
            let (res, out) = open(&common)?;
            let dates = dates.or(res.file.dates).unwrap_or(1usize << res.levels.1);
            let atm = if res.payoff.strike > 0.0 { res.payoff.strike.ln() } else { 0.0 };
            let points = res.points()?.unwrap_or_else(|| vec![vec![atm; res.chain.d]]);
            let v = price_many(&res.chain, &res.payoff, res.file.r, res.file.horizon, dates, &points)?;
            let mut text = format!("{},payoff,price\n", x_header(res.chain.d));
            for (x, p) in points.iter().zip(&v) {
                let _ = writeln!(text, "{},{},{}", fmt_point(x), res.payoff.payoff(x), p);
            }
            print!("{text}");
            emit(out.as_deref(), "price.csv", &text)?;
        }
        Command::Refine { common } => {
            let (res, out) = open(&common)?;
            let points = match res.points()? {
                Some(p) => p,
                None => res.verify_config(None)?.points,
            };
            let t = dyadic_sequence(&res.chain, &res.payoff, res.file.r, res.file.horizon, res.levels, &points)?;
            let mut text = format!("level,{},value,diff_prev\n", x_header(res.chain.d));
            for (li, level) in t.levels.iter().enumerate() {
                for (pi, x) in points.iter().enumerate() {
                    let diff = t.diff_prev(li, pi).map_or_else(String::new, |d| d.to_string());
                    let _ = writeln!(text, "{level},{},{},{diff}", fmt_point(x), t.values[li][pi]);
                }
            }
            match out {
                Some(dir) => {
                    emit(Some(&dir), "refine.csv", &text)?;
                    println!("wrote {}", dir.join("refine.csv").display());
                }
                None => print!("{text}"),
            }
        }
        Command::Bounds { common } => {
            let (res, out) = open(&common)?;
            let vc = res.verify_config(None)?;
            let bx = vc.bx.as_ref().map(|(a, b)| (a.as_slice(), b.as_slice()));
            let rep = bounds_report(&res.chain, &res.payoff, res.file.r, res.file.horizon, bx)?;
            let text = rep.to_text();
            print!("{text}");
            emit(out.as_deref(), "bounds.txt", &text)?;
            emit(out.as_deref(), "bounds.json", &serde_json::to_string_pretty(&rep)?)?;
        }
        Command::Verify { common, suite, dx } => {
            let (res, out) = open(&common)?;
            let suites = if suite.is_empty() { res.suites()? } else { suite };
            let vc = res.verify_config(dx)?;
            let results = run_suites(&suites, &vc)?;
            print!("{}", report_text(&results));
            if let Some(dir) = &out {
                write_report(&results, dir)?;
            }
            if exit_code(&results) != 0 {
                return Ok(Outcome::ChecksFailed);
            }
        }
        Command::LatticeStats { common, steps } => {
            let (res, out) = open(&common)?;
            let steps = match steps {
                Some(s) => s,
                None => steps_in(res.file.horizon, res.chain.h).unwrap_or(1),
            };
            let emb = detect_embedding(&res.chain, 1e-10)?;
            let growth = node_growth(&emb, steps);
            let mod2 = res.formula.as_ref().map(mod2_recombination_analysis).transpose()?;
            let mut text = format!("steps  distinct  naive_paths  distinct/(2n+1)^{}\n", res.chain.d);
            for g in &growth {
                let _ = writeln!(text, "{:>5}  {:>8}  {:>11.4e}  {:>8.4}", g.steps, g.distinct, g.naive_paths, g.ratio);
            }
            match &mod2 {
                Some(m) => {
                    let _ = writeln!(text, "\nmod 2: {} projected points, rank {}", m.projected_count, m.rank);
                    let _ = writeln!(text, "{}", m.summary);
                }
                None => {
                    let _ = writeln!(text, "\nmod 2: no cubature formula behind this chain");
                }
            }
            print!("{text}");
            let report = json!({ "embedding": emb, "growth": growth, "mod2": mod2 });
            emit(out.as_deref(), "lattice.json", &serde_json::to_string_pretty(&report)?)?;
        }
        Command::Calibrate { config, formula, r, delta, sigma, h } => {
            let (f, r, delta, sigma, h) = match (config, formula) {
                (Some(path), None) => {
                    let file = config::load(&path)?;
                    let f = config::formula(&file.chain)?
                        .ok_or_else(|| anyhow!("calibrate needs a cubature chain"))?;
                    let ChainBlock::Cubature { sigma, h, .. } = &file.chain else {
                        unreachable!("formula implies a cubature block")
                    };
                    let s = config::sigma_for(&f, sigma, file.r, file.delta, *h)?;
                    (f, file.r, file.delta, s, *h)
                }
                (None, Some(name)) => {
                    let (Some(r), Some(sigma), Some(h)) = (r, sigma, h) else {
                        bail!("--formula needs --r, --sigma and --h");
                    };
                    (builtin_formula(&name)?, r, delta, sigma, h)
                }
                _ => bail!("give either --config or --formula"),
            };
            if sigma.len() != f.d {
                bail!("sigma has {} entries, formula dimension is {}", sigma.len(), f.d);
            }
            let mu = calibrate_drift(&f, r, delta, &sigma, h);
            let (chain, _) = build_chain(&f, &mu, &sigma, h)?;
            let residual = martingale_residual(&chain, r, delta);
            let adm = admissible_volatility(&f, r - delta, h);
            let report = json!({
                "mu": mu,
                "residual": residual,
                "admissible_sigma": adm,
            });
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
    }
    Ok(Outcome::Done)
}
