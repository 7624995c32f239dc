use std::ffi::OsString;
use std::fmt::Write as _;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use demobandit_core::bounds::{compute_bounds, reward_range_bound, BoundInputs, BoundReport};
use demobandit_core::estimate::{estimate_beta, BetaMethod, EstimatorSettings};
use demobandit_core::experiment::sample_world;

use crate::dataset::{read_dataset, write_dataset};
use crate::error::{AppError, Result};
use crate::runner::{load_config, run_experiment, summary, write_csv};

#[derive(Debug, Parser)]
#[command(
    name = "demobandit",
    version,
    about = "Thompson sampling with offline expert demonstrations"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run a Monte-Carlo regret experiment and write per-step mean/stderr CSV.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Worker threads (overrides DEMOBANDIT_THREADS).
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Evaluate the regret-bound quantities.
    Bounds(BoundsArgs),
    /// Estimate the expert's beta from a dataset file.
    EstimateBeta {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum)]
        method: MethodArg,
        #[arg(long, default_value_t = 1.0)]
        ridge: f64,
        #[arg(long, default_value_t = 100.0)]
        beta_max: f64,
        #[arg(long, default_value_t = 1.0)]
        c0: f64,
    },
    /// Sample one environment from a config and write its demonstrations.
    GenDemos {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        run_index: u64,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum MethodArg {
    Mle,
    Entropy,
}

#[derive(Debug, Args)]
struct BoundsArgs {
    #[arg(long = "K")]
    k: usize,
    #[arg(long = "T")]
    t: usize,
    #[arg(long = "N")]
    n: usize,
    #[arg(long)]
    beta: f64,
    /// Knowledgeability; `inf` for a perfectly informed expert.
    #[arg(long, value_parser = parse_lambda)]
    lambda: f64,
    /// Sweep one input: `key=lo:hi:steps` with key in K, T, N, beta, lambda.
    #[arg(long, value_parser = parse_sweep)]
    sweep: Option<Sweep>,
    /// Also write the report(s) as CSV.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Returns 1/λ.
fn parse_lambda(s: &str) -> std::result::Result<f64, String> {
    if matches!(s.to_ascii_lowercase().as_str(), "inf" | "infinity") {
        return Ok(0.0);
    }
    match s.parse::<f64>() {
        Ok(v) if v > 0.0 => Ok(1.0 / v),
        _ => Err(format!("lambda must be positive or `inf`, got {s:?}")),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum SweepKey {
    K,
    T,
    N,
    Beta,
    Lambda,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Sweep {
    key: SweepKey,
    lo: f64,
    hi: f64,
    steps: usize,
}

fn parse_sweep(s: &str) -> std::result::Result<Sweep, String> {
    let (key, range) = s.split_once('=').ok_or("expected key=lo:hi:steps")?;
    let key = match key {
        "K" => SweepKey::K,
        "T" => SweepKey::T,
        "N" => SweepKey::N,
        "beta" => SweepKey::Beta,
        "lambda" => SweepKey::Lambda,
        _ => return Err(format!("unknown sweep key {key:?}")),
    };
    let parts: Vec<&str> = range.split(':').collect();
    let [lo, hi, steps] = parts[..] else {
        return Err("expected key=lo:hi:steps".into());
    };
    let lo: f64 = lo.parse().map_err(|_| format!("bad lower bound {lo:?}"))?;
    let hi: f64 = hi.parse().map_err(|_| format!("bad upper bound {hi:?}"))?;
    let steps: usize = steps
        .parse()
        .map_err(|_| format!("bad step count {steps:?}"))?;
    if steps == 0 || !lo.is_finite() || !hi.is_finite() {
        return Err("sweep needs finite bounds and at least one step".into());
    }
    Ok(Sweep { key, lo, hi, steps })
}

impl Sweep {
    fn values(&self) -> Vec<f64> {
        if self.steps == 1 {
            return vec![self.lo];
        }
        (0..self.steps)
            .map(|i| self.lo + (self.hi - self.lo) * i as f64 / (self.steps - 1) as f64)
            .collect()
    }
}

fn sweep_inputs(base: BoundInputs, sweep: &Sweep) -> Result<Vec<BoundInputs>> {
    let count = |v: f64, name: &str| -> Result<usize> {
        if v < 0.0 {
            return Err(AppError::Usage(format!(
                "{name} must be non-negative in a sweep"
            )));
        }
        Ok(v.round() as usize)
    };
    sweep
        .values()
        .into_iter()
        .map(|v| {
            let mut inp = base;
            match sweep.key {
                SweepKey::K => inp.num_actions = count(v, "K")?,
                SweepKey::T => inp.horizon = count(v, "T")?,
                SweepKey::N => inp.num_demos = count(v, "N")?,
                SweepKey::Beta => inp.beta = v,
                SweepKey::Lambda => {
                    inp.inv_lambda = if v > 0.0 {
                        1.0 / v
                    } else {
                        return Err(AppError::Usage("lambda must be positive in a sweep".into()));
                    }
                }
            }
            Ok(inp)
        })
        .collect()
}

fn lambda_text(inv_lambda: f64) -> String {
    if inv_lambda == 0.0 {
        "inf".into()
    } else {
        format!("{}", 1.0 / inv_lambda)
    }
}

fn report_text(inp: &BoundInputs, r: &BoundReport) -> String {
    let mut s = String::new();
    writeln!(s, "K={}", inp.num_actions).unwrap();
    writeln!(s, "T={}", inp.horizon).unwrap();
    writeln!(s, "N={}", inp.num_demos).unwrap();
    writeln!(s, "beta={}", inp.beta).unwrap();
    writeln!(s, "lambda={}", lambda_text(inp.inv_lambda)).unwrap();
    for (k, v) in [
        ("alpha1", r.alpha1),
        ("alpha2", r.alpha2),
        ("f1", r.f1),
        ("f2", r.f2),
        ("main_term", r.main_term),
        ("remainder_term", r.remainder_term),
        ("total_bound", r.total_bound),
        ("reward_range_bound", reward_range_bound(inp.num_actions)),
    ] {
        writeln!(s, "{k}={v:.6}").unwrap();
    }
    s
}

fn report_warnings(r: &BoundReport) -> Vec<&'static str> {
    let mut w = Vec::new();
    if r.flags.condition_violated {
        w.push("K < log2(T): the informative-set condition does not hold");
    }
    if r.flags.loose_regime {
        w.push("alpha1 >= 1: f1 uses the loose surrogate T for log T / log(1/alpha1)");
    }
    if r.flags.beta_fallback {
        w.push("beta <= 1/T: alpha1 pinned to K");
    }
    w
}

const BOUNDS_CSV_HEADER: &str =
    "K,T,N,beta,lambda,alpha1,alpha2,f1,f2,main_term,remainder_term,total_bound,loose_regime,condition_violated";

fn report_csv_row(inp: &BoundInputs, r: &BoundReport) -> String {
    format!(
        "{},{},{},{},{},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{},{}",
        inp.num_actions,
        inp.horizon,
        inp.num_demos,
        inp.beta,
        lambda_text(inp.inv_lambda),
        r.alpha1,
        r.alpha2,
        r.f1,
        r.f2,
        r.main_term,
        r.remainder_term,
        r.total_bound,
        r.flags.loose_regime,
        r.flags.condition_violated
    )
}

fn bounds(args: &BoundsArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<()> {
    let base = BoundInputs {
        num_actions: args.k,
        horizon: args.t,
        num_demos: args.n,
        beta: args.beta,
        inv_lambda: args.lambda,
    };
    let inputs = match &args.sweep {
        Some(s) => sweep_inputs(base, s)?,
        None => vec![base],
    };
    let mut csv = format!("{BOUNDS_CSV_HEADER}\n");
    for (i, inp) in inputs.iter().enumerate() {
        let report = compute_bounds(inp)?;
        if i > 0 {
            writeln!(out).ok();
        }
        write!(out, "{}", report_text(inp, &report)).ok();
        for w in report_warnings(&report) {
            writeln!(err, "warning: {w}").ok();
        }
        csv.push_str(&report_csv_row(inp, &report));
        csv.push('\n');
    }
    if let Some(path) = &args.out {
        std::fs::write(path, csv).map_err(|e| AppError::io(path, e))?;
    }
    Ok(())
}

fn dispatch(cli: Cli, out: &mut dyn Write, err: &mut dyn Write) -> Result<()> {
    match cli.command {
        Command::Simulate {
            config,
            out: path,
            threads,
        } => {
            let cfg = load_config(&config)?;
            let result = run_experiment(&cfg, threads)?;
            write_csv(&result, &path)?;
            write!(out, "{}", summary(&result)).ok();
        }
        Command::Bounds(args) => bounds(&args, out, err)?,
        Command::EstimateBeta {
            data,
            method,
            ridge,
            beta_max,
            c0,
        } => {
            let file = read_dataset(&data)?;
            let actions = file.action_set()?;
            let method = match method {
                MethodArg::Mle => BetaMethod::Mle,
                MethodArg::Entropy => BetaMethod::Entropy,
            };
            let settings = EstimatorSettings {
                ridge,
                beta_max,
                c0,
            };
            let est = estimate_beta(method, &file.dataset, &actions, &settings)?;
            let (name, diag) = match method {
                BetaMethod::Mle => ("mle", "nll"),
                BetaMethod::Entropy => ("entropy", "entropy"),
            };
            writeln!(out, "method={name}").ok();
            writeln!(out, "N={}", file.dataset.len()).ok();
            writeln!(out, "beta_hat={}", est.beta_hat).ok();
            writeln!(out, "{diag}={}", est.diagnostic).ok();
        }
        Command::GenDemos {
            config,
            out: path,
            run_index,
        } => {
            let cfg = load_config(&config)?;
            let world = sample_world(&cfg, run_index)?;
            write_dataset(&path, &world.offline, Some(world.env.actions()))?;
            writeln!(
                out,
                "wrote {} demonstrations to {}",
                world.offline.len(),
                path.display()
            )
            .ok();
        }
    }
    Ok(())
}

/// Parses `argv` (including the program name), runs the command and
/// returns the process exit code.
pub fn run<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let text = e.render().to_string();
            if code == 0 {
                write!(out, "{text}").ok();
            } else {
                write!(err, "{text}").ok();
            }
            return code;
        }
    };
    match dispatch(cli, out, err) {
        Ok(()) => 0,
        Err(e) => {
            writeln!(err, "error: {e}").ok();
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lambda_parsing() {
        assert_eq!(parse_lambda("inf"), Ok(0.0));
        assert_eq!(parse_lambda("4"), Ok(0.25));
        assert!(parse_lambda("0").is_err());
        assert!(parse_lambda("-1").is_err());
    }

    #[test]
    fn sweep_parsing() {
        let s = parse_sweep("N=0:100:11").unwrap();
        assert_eq!(s.key, SweepKey::N);
        assert_eq!(s.values().len(), 11);
        assert_eq!(s.values()[10], 100.0);
        assert!(parse_sweep("x=0:1:2").is_err());
        assert!(parse_sweep("N=0:1").is_err());
        assert!(parse_sweep("N=0:1:0").is_err());
    }
}
