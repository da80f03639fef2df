//! Command-line experiment runner.
//!
//! Exit codes: 0 success, 1 bad input or failed check, 2 liveness timeout.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use num_traits::ToPrimitive;

use crate::bounds::{self, BoundConfig};
use crate::error::{Error, Result};
use crate::receiver::GcMode;
use crate::scheduler::hamilton_apportion;
use crate::sim::{self, canned, scenario::Scenario, trace::Trace, Outcome};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_LIVENESS_TIMEOUT: i32 = 2;

const TIMELINE_GOLDEN: &str = include_str!("../tests/golden/timeline_quacks.csv");
const CRASH_GOLDEN: &str = include_str!("../tests/golden/crash_m5_recovery.csv");

#[derive(Debug, Parser)]
#[command(
    name = "picsou",
    version,
    about = "Cross-RSM broadcast simulator and bound calculator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run a scenario from a JSON config.
    Run {
        config: PathBuf,
        /// Directory for metrics.csv and trace.csv.
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Overrides the config's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Also write the full event trace.
        #[arg(long)]
        trace: bool,
    },
    /// Retry bounds, analytic or Monte Carlo.
    Bounds {
        #[arg(long, allow_hyphen_values = true)]
        alpha_s: Option<String>,
        #[arg(long, allow_hyphen_values = true)]
        alpha_r: Option<String>,
        /// Target failure probability, e.g. 1e-11 or 1/1000.
        #[arg(long)]
        pfail: Option<String>,
        /// Monte Carlo over n = 3f+1 replicas per side: `--mc F TRIALS`.
        #[arg(long, num_args = 2, value_names = ["F", "TRIALS"])]
        mc: Option<Vec<u64>>,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Reproduce a scripted scenario and check it against its expected outcome.
    Repro { name: ReproName },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ReproName {
    Timeline,
    CrashM5,
    GcStall,
    Apportionment,
    Lemma1,
}

/// Parses arguments and runs the command, writing human output to `out`.
pub fn run_cli<I, T>(args: I, out: &mut String) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_FAILURE } else { EXIT_OK };
            let _ = write!(out, "{e}");
            return code;
        }
    };
    let result = match cli.command {
        Command::Run {
            config,
            out: dir,
            seed,
            trace,
        } => cmd_run(&config, &dir, seed, trace, out),
        Command::Bounds {
            alpha_s,
            alpha_r,
            pfail,
            mc,
            seed,
        } => cmd_bounds(alpha_s, alpha_r, pfail, mc, seed, out),
        Command::Repro { name } => Ok(cmd_repro(name, out)),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(out, "error: {e}");
            EXIT_FAILURE
        }
    }
}

fn cmd_run(config: &Path, dir: &Path, seed: Option<u64>, keep_trace: bool, out: &mut String) -> Result<i32> {
    let mut scenario = Scenario::load(config)?;
    if let Some(s) = seed {
        scenario.seed = s;
    }
    let res = sim::run(&scenario, keep_trace)?;
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("metrics.csv"), res.metrics.to_csv(&res.outcome.to_string()))?;
    if let Some(lines) = &res.trace {
        std::fs::write(dir.join("trace.csv"), Trace::render(lines))?;
    }
    let _ = writeln!(
        out,
        "outcome={} protocol={} messages={} ticks={} copies_per_message={} resends={} trace_hash={}",
        res.outcome,
        res.metrics.protocol,
        res.metrics.totals.messages,
        res.ticks,
        res.metrics.copies_per_message(),
        res.metrics.totals.resends,
        res.trace_hash
    );
    Ok(match res.outcome {
        Outcome::Completed => EXIT_OK,
        Outcome::LivenessTimeout => EXIT_LIVENESS_TIMEOUT,
    })
}

fn cmd_bounds(
    alpha_s: Option<String>,
    alpha_r: Option<String>,
    pfail: Option<String>,
    mc: Option<Vec<u64>>,
    seed: u64,
    out: &mut String,
) -> Result<i32> {
    let one = num_rational::BigRational::from_integer(1.into());
    let parse_alpha = |name: &str, v: Option<String>| -> Result<num_rational::BigRational> {
        let a = bounds::parse_rational(v.as_deref().unwrap_or("3")).map_err(|_| Error::config(name, "not a number"))?;
        if a <= one {
            return Err(Error::config(name, "replication factor must exceed 1"));
        }
        Ok(a)
    };
    let a_s = parse_alpha("alpha-s", alpha_s)?;
    let a_r = parse_alpha("alpha-r", alpha_r)?;
    let base = bounds::faulty_pair_fraction_exact(&a_s, &a_r);
    let base_f = base.to_f64().unwrap_or(f64::NAN);

    if let Some(mc) = mc {
        let (f, trials) = (mc[0] as usize, mc[1]);
        let h = bounds::monte_carlo_tail(&BoundConfig::three_f_plus_one(f, trials, seed));
        out.push_str(&h.to_csv());
        let bound = (5.0f64 / 9.0).powi(8);
        let _ = writeln!(
            out,
            "n={} f={f} trials={trials} p_gt_8={:.6} bound={bound:.6} max_attempts={}",
            3 * f + 1,
            h.tail(8),
            h.max_attempts()
        );
        return Ok(if h.tail(8) <= bound { EXIT_OK } else { EXIT_FAILURE });
    }
    let _ = writeln!(out, "faulty_pair_fraction={base} ({base_f:.6})");
    if let Some(p) = pfail {
        let p = bounds::parse_rational(&p).map_err(|_| Error::config("pfail", "not a number"))?;
        let _ = writeln!(out, "min_retries={}", bounds::min_retries(&p, &base)?);
    }
    Ok(EXIT_OK)
}

struct Checks<'a> {
    out: &'a mut String,
    ok: bool,
}

impl Checks<'_> {
    fn check(&mut self, name: &str, pass: bool, detail: impl std::fmt::Display) {
        self.ok &= pass;
        let _ = writeln!(self.out, "{} {name}: {detail}", if pass { "PASS" } else { "FAIL" });
    }
}

fn trace_lines(s: &Scenario) -> Result<(Outcome, Vec<String>)> {
    let r = sim::run(s, true)?;
    Ok((r.outcome, r.trace.unwrap_or_default()))
}

fn filtered(lines: &[String], events: &[&str]) -> Vec<String> {
    lines
        .iter()
        .filter(|l| l.split(',').nth(1).is_some_and(|e| events.contains(&e)))
        .cloned()
        .collect()
}

fn golden(text: &str) -> Vec<String> {
    text.lines().map(str::to_owned).collect()
}

fn cmd_repro(name: ReproName, out: &mut String) -> i32 {
    let mut c = Checks { out, ok: true };
    if let Err(e) = repro_checks(name, &mut c) {
        c.check("run", false, e);
    }
    let verdict = if c.ok { "PASS" } else { "FAIL" };
    let _ = writeln!(c.out, "{verdict}");
    if c.ok {
        EXIT_OK
    } else {
        EXIT_FAILURE
    }
}

fn repro_checks(name: ReproName, c: &mut Checks) -> Result<()> {
    match name {
        ReproName::Timeline => {
            let (outcome, lines) = trace_lines(&canned::timeline())?;
            let quacks = filtered(&lines, &["QUACK", "QUACKPOS"]);
            c.check("completed", outcome == Outcome::Completed, outcome);
            c.check(
                "m1 quacked at sender 0 on tick 5",
                quacks.iter().any(|l| l == "5,QUACK,0,1,0,level=1"),
                "5,QUACK,0,1,0,level=1",
            );
            c.check(
                "quack events match golden",
                quacks == golden(TIMELINE_GOLDEN),
                format!("{} lines", quacks.len()),
            );
        }
        ReproName::CrashM5 => {
            let (outcome, lines) = trace_lines(&canned::crash_m5())?;
            let recovery = filtered(&lines, &["DUPACK", "DUPROUND", "RESEND"]);
            let resends: Vec<&String> = recovery
                .iter()
                .filter(|l| l.contains(",RESEND,") && l.split(',').nth(4) == Some("4"))
                .collect();
            c.check("completed", outcome == Outcome::Completed, outcome);
            c.check(
                "m5 resent once, by sender 1",
                resends.len() == 1 && resends[0].split(',').nth(2) == Some("1"),
                resends.first().map_or("none".to_owned(), |l| l.to_string()),
            );
            c.check(
                "recovery events match golden",
                recovery == golden(CRASH_GOLDEN),
                format!("{} lines", recovery.len()),
            );
        }
        ReproName::GcStall => {
            for (label, mode, hints, want) in [
                ("advance", GcMode::Advance, true, Outcome::Completed),
                ("fetch", GcMode::Fetch, true, Outcome::Completed),
                ("hints off", GcMode::Advance, false, Outcome::LivenessTimeout),
            ] {
                let r = sim::run(&canned::gc_stall(mode, hints), false)?;
                c.check(
                    label,
                    r.outcome == want,
                    format!("{} after {} ticks", r.outcome, r.ticks),
                );
            }
        }
        ReproName::Apportionment => {
            for (shares, q, want) in [
                (vec![25u64, 25, 25, 25], 100u64, vec![25u64, 25, 25, 25]),
                (vec![250, 250, 250, 250], 100, vec![25, 25, 25, 25]),
                (vec![214, 262, 262, 262], 100, vec![22, 26, 26, 26]),
                (vec![97, 1, 1, 1], 10, vec![10, 0, 0, 0]),
            ] {
                let got = hamilton_apportion(&shares, q);
                c.check(&format!("shares={shares:?} q={q}"), got == want, format!("{got:?}"));
            }
        }
        ReproName::Lemma1 => {
            for (n, u) in [(4usize, 1usize), (7, 2)] {
                let w = bounds::exhaustive_worst_case(n, u, n, u);
                c.check(
                    &format!("n={n} u={u}"),
                    w.max_attempts as usize == 2 * u + 1,
                    format!("max attempts {} over {} placements", w.max_attempts, w.placements),
                );
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(args: &[&str]) -> (i32, String) {
        let mut out = String::new();
        let code = run_cli(std::iter::once("picsou").chain(args.iter().copied()), &mut out);
        (code, out)
    }

    #[test]
    fn bounds_analytic() {
        let (code, out) = run(&["bounds", "--alpha-s", "3", "--alpha-r", "3", "--pfail", "1e-11"]);
        assert_eq!(code, EXIT_OK);
        assert!(out.contains("min_retries=44"), "{out}");
    }

    #[test]
    fn bounds_rejects_small_alpha() {
        let (code, out) = run(&["bounds", "--alpha-s", "1", "--alpha-r", "3", "--pfail", "0.5"]);
        assert_eq!(code, EXIT_FAILURE);
        assert!(out.contains("alpha-s"), "{out}");
    }

    #[test]
    fn unknown_subcommand_is_failure() {
        assert_eq!(run(&["frobnicate"]).0, EXIT_FAILURE);
    }

    #[test]
    fn repro_apportionment_passes() {
        let (code, out) = run(&["repro", "apportionment"]);
        assert_eq!(code, EXIT_OK, "{out}");
        assert_eq!(out.lines().filter(|l| l.starts_with("PASS shares")).count(), 4);
    }
}
