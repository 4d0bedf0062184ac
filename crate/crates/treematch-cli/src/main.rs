//! Command-line front end. Exit codes: 0 when everything checked out, 1 when
//! a run finished but an audit, guarantee, or verification failed, 2 for
//! usage, config, or parse problems.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use treematch::harness::{
    self, make_matcher, parse_suite_config, run_adaptive_hard_mcm, run_hard_mwm, run_report,
    run_suite, HarnessError, Report,
};
use treematch::instance::{
    gen_hard_mcm_static, gen_hard_mwm, gen_random_forest, gen_random_growing_tree,
    geometric_base_auto, parse_stream, serialize_stream, validate_model, HardMwmVariant,
};
use treematch::rational::{format_rational, parse_rational, Rational};
use treematch::{mcm_forest, mcm_tree, mwm_tree};

#[derive(Parser)]
#[command(
    name = "treematch",
    about = "Online fractional matching with free disposal on growing trees and forests",
    version
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Parse an instance file and check it against its arrival model.
    Validate { file: PathBuf },
    /// Run one algorithm over one instance file.
    Run {
        /// mcm-tree | mcm-forest | mwm | greedy
        #[arg(long)]
        algo: String,
        #[arg(long)]
        instance: PathBuf,
        /// Check primal-dual invariants after every event.
        #[arg(long)]
        audit: bool,
        /// Write the JSON report here.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Drive a hard-instance family against an algorithm.
    Hard {
        #[command(subcommand)]
        family: HardCmd,
    },
    /// Compile a run's trace to a rounding plan and sample it.
    Round {
        #[arg(long)]
        algo: String,
        #[arg(long)]
        instance: PathBuf,
        #[arg(long)]
        trials: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Also enumerate the exact distribution and verify every marginal.
        #[arg(long)]
        exact: bool,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Run a JSON config of suite items, in parallel.
    Suite {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Emit instance files.
    Gen {
        #[command(subcommand)]
        what: GenCmd,
    },
}

#[derive(Subcommand)]
enum HardCmd {
    /// Adaptive caterpillar: the adversary reacts to public fractions.
    Mcm {
        #[arg(long)]
        n: usize,
        #[arg(long, default_value = "mcm-tree")]
        algo: String,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Ordinal ladder pair, indistinguishable by weight comparisons.
    Mwm {
        #[arg(long)]
        n: usize,
        #[arg(long, default_value = "1/1000")]
        eps: String,
        #[arg(long, default_value = "1/2")]
        delta: String,
        /// Geometric base; computed from n when omitted.
        #[arg(long)]
        base: Option<String>,
        #[arg(long)]
        report: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum GenCmd {
    /// Random growing tree with n edges.
    Tree {
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        weighted: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Random forest with n edges.
    Forest {
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Probability an arrival tries to join two trees, as p/q.
        #[arg(long, default_value = "1/2")]
        merge_bias: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Caterpillar with the spine fixed in advance.
    HardMcm {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Weight ladder from the ordinal hardness pair.
    HardMwm {
        #[arg(long)]
        n: usize,
        /// additive | geometric
        #[arg(long, default_value = "additive")]
        variant: String,
        #[arg(long, default_value = "1/1000")]
        eps: String,
        /// Geometric base; computed from n when omitted.
        #[arg(long)]
        base: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn guarantee_for(algo: &str) -> Option<Rational> {
    match algo {
        "mcm-tree" => Some(mcm_tree::guarantee()),
        "mcm-forest" => Some(mcm_forest::guarantee()),
        "mwm" => Some(mwm_tree::guarantee()),
        _ => None,
    }
}

fn parse_rat_arg(name: &str, text: &str) -> Result<Rational, HarnessError> {
    parse_rational(text).map_err(|e| HarnessError::Usage(format!("--{name}: {e}")))
}

fn read_file(path: &Path) -> Result<String, HarnessError> {
    std::fs::read_to_string(path).map_err(|e| HarnessError::Io(format!("{}: {e}", path.display())))
}

fn write_output(path: Option<&Path>, text: &str) -> Result<(), HarnessError> {
    match path {
        Some(p) => {
            std::fs::write(p, text).map_err(|e| HarnessError::Io(format!("{}: {e}", p.display())))?;
            println!("written: {}", p.display());
            Ok(())
        }
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

/// Prints the human summary and returns false when the ratio misses the
/// algorithm's guarantee or an audit failed.
fn summarize(report: &Report) -> bool {
    println!("instance: {}", report.instance);
    println!("algo:     {}", report.algo);
    println!(
        "alg = {}, opt = {}, ratio = {}",
        format_rational(&report.alg),
        format_rational(&report.opt),
        format_rational(&report.ratio)
    );
    let mut ok = true;
    if let Some(g) = guarantee_for(&report.algo) {
        let met = report.ratio >= g;
        println!(
            "guarantee {}: {}",
            format_rational(&g),
            if met { "met" } else { "MISSED" }
        );
        ok &= met;
    }
    if !report.audits.is_empty() {
        let passed = report.audits.iter().filter(|a| a.pass).count();
        println!("audits:   {passed}/{} passed", report.audits.len());
        for fail in report.audits.iter().filter(|a| !a.pass) {
            println!("  FAIL event {} {}: {}", fail.event, fail.check, fail.detail);
        }
        ok &= report.all_audits_pass();
    }
    if let Some(rows) = &report.monte_carlo {
        let inside = rows.iter().filter(|r| r.z.abs() <= 3.0).count();
        println!("monte carlo: {}/{} edges inside the 3-sigma band", inside, rows.len());
    }
    for note in &report.notes {
        println!("note: {note}");
    }
    ok
}

fn write_report(report: &Report, path: Option<&Path>) -> Result<(), HarnessError> {
    if let Some(p) = path {
        let text = serde_json::to_string_pretty(&report.to_json(true))
            .map_err(|e| HarnessError::Io(e.to_string()))?;
        std::fs::write(p, text).map_err(|e| HarnessError::Io(format!("{}: {e}", p.display())))?;
        println!("report written: {}", p.display());
    }
    Ok(())
}

fn dispatch(cli: Cli) -> Result<bool, HarnessError> {
    match cli.cmd {
        Cmd::Validate { file } => {
            let stream = parse_stream(&read_file(&file)?)?;
            validate_model(&stream)?;
            println!(
                "ok: {} event(s), model {}, {}",
                stream.len(),
                stream.model.tag(),
                if stream.weighted { "weighted" } else { "unweighted" }
            );
            Ok(true)
        }
        Cmd::Run {
            algo,
            instance,
            audit,
            report,
        } => {
            let stream = parse_stream(&read_file(&instance)?)?;
            validate_model(&stream)?;
            let label = instance.display().to_string();
            let rep = run_report(&algo, &stream, &label, audit, None, false, 0)?;
            let ok = summarize(&rep);
            write_report(&rep, report.as_deref())?;
            Ok(ok)
        }
        Cmd::Hard { family } => match family {
            HardCmd::Mcm { n, algo, report } => {
                let mut matcher = make_matcher(&algo)?;
                let rep = run_adaptive_hard_mcm(matcher.as_mut(), n)?;
                let mut ok = summarize(&rep);
                if guarantee_for(&algo).is_some() {
                    let bound = harness::adaptive_bound(n);
                    let inside = rep.ratio <= bound;
                    println!(
                        "adaptive bound {}: {}",
                        format_rational(&bound),
                        if inside { "respected" } else { "EXCEEDED" }
                    );
                    ok &= inside;
                }
                write_report(&rep, report.as_deref())?;
                Ok(ok)
            }
            HardCmd::Mwm {
                n,
                eps,
                delta,
                base,
                report,
            } => {
                let eps = parse_rat_arg("eps", &eps)?;
                let delta = parse_rat_arg("delta", &delta)?;
                let base = base.map(|b| parse_rat_arg("base", &b)).transpose()?;
                let outcome = run_hard_mwm(n, &eps, base, &delta)?;
                let ok_a = summarize(&outcome.additive);
                println!();
                let ok_g = summarize(&outcome.geometric);
                println!();
                println!(
                    "ordinal signatures identical: {}",
                    outcome.signatures_identical
                );
                println!(
                    "bound curve at delta={}: {}",
                    format_rational(&outcome.delta),
                    format_rational(&outcome.bound_probe)
                );
                if let Some(p) = report.as_deref() {
                    let value = serde_json::json!({
                        "additive": outcome.additive.to_json(true),
                        "geometric": outcome.geometric.to_json(true),
                        "signatures_identical": outcome.signatures_identical,
                        "epsilon": format_rational(&outcome.epsilon),
                        "base": format_rational(&outcome.base),
                        "delta": format_rational(&outcome.delta),
                        "bound_probe": format_rational(&outcome.bound_probe),
                    });
                    let text = serde_json::to_string_pretty(&value)
                        .map_err(|e| HarnessError::Io(e.to_string()))?;
                    std::fs::write(p, text)
                        .map_err(|e| HarnessError::Io(format!("{}: {e}", p.display())))?;
                    println!("report written: {}", p.display());
                }
                Ok(ok_a && ok_g && outcome.signatures_identical)
            }
        },
        Cmd::Round {
            algo,
            instance,
            trials,
            seed,
            exact,
            report,
        } => {
            let stream = parse_stream(&read_file(&instance)?)?;
            validate_model(&stream)?;
            let label = instance.display().to_string();
            let rep = run_report(&algo, &stream, &label, false, Some(trials), exact, seed)?;
            let ok = summarize(&rep);
            write_report(&rep, report.as_deref())?;
            Ok(ok)
        }
        Cmd::Suite { config, report } => {
            let items = parse_suite_config(&read_file(&config)?)?;
            let outcomes = run_suite(&items);
            let mut ok = true;
            for out in &outcomes {
                match &out.result {
                    Ok(rep) => {
                        let mut item_ok = rep.all_audits_pass();
                        if let Some(g) = guarantee_for(&rep.algo) {
                            item_ok &= rep.ratio >= g;
                        }
                        println!(
                            "[{}] {}: ratio={}, audits {}/{}",
                            if item_ok { "ok" } else { "FAIL" },
                            out.name,
                            format_rational(&rep.ratio),
                            rep.audits.iter().filter(|a| a.pass).count(),
                            rep.audits.len()
                        );
                        ok &= item_ok;
                    }
                    Err(e) => {
                        println!("[FAIL] {}: {e}", out.name);
                        ok = false;
                    }
                }
            }
            if let Some(p) = report.as_deref() {
                let rows: Vec<serde_json::Value> =
                    outcomes.iter().map(|o| o.to_json(true)).collect();
                let text = serde_json::to_string_pretty(&serde_json::Value::Array(rows))
                    .map_err(|e| HarnessError::Io(e.to_string()))?;
                std::fs::write(p, text)
                    .map_err(|e| HarnessError::Io(format!("{}: {e}", p.display())))?;
                println!("report written: {}", p.display());
            }
            Ok(ok)
        }
        Cmd::Gen { what } => {
            let (stream, out) = match what {
                GenCmd::Tree {
                    n,
                    seed,
                    weighted,
                    out,
                } => (gen_random_growing_tree(n, weighted, seed)?, out),
                GenCmd::Forest {
                    n,
                    seed,
                    merge_bias,
                    out,
                } => {
                    let bias = parse_rat_arg("merge-bias", &merge_bias)?;
                    (gen_random_forest(n, &bias, seed)?, out)
                }
                GenCmd::HardMcm { n, out } => (gen_hard_mcm_static(n)?, out),
                GenCmd::HardMwm {
                    n,
                    variant,
                    eps,
                    base,
                    out,
                } => {
                    let stream = match variant.as_str() {
                        "additive" => {
                            gen_hard_mwm(n, HardMwmVariant::Additive, &parse_rat_arg("eps", &eps)?)?
                        }
                        "geometric" => {
                            let b = match base {
                                Some(b) => parse_rat_arg("base", &b)?,
                                None => geometric_base_auto(n),
                            };
                            gen_hard_mwm(n, HardMwmVariant::Geometric, &b)?
                        }
                        other => {
                            return Err(HarnessError::Usage(format!(
                                "--variant must be additive or geometric, got `{other}`"
                            )))
                        }
                    };
                    (stream, out)
                }
            };
            write_output(out.as_deref(), &serialize_stream(&stream))?;
            Ok(true)
        }
    }
}

fn exit_for(err: &HarnessError) -> ExitCode {
    use treematch::matcher::AlgoError;
    match err {
        HarnessError::Usage(_)
        | HarnessError::Config(_)
        | HarnessError::Io(_)
        | HarnessError::Instance(_) => ExitCode::from(2),
        HarnessError::Algo(AlgoError::WrongDispatch(_)) => ExitCode::from(2),
        _ => ExitCode::from(1),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            exit_for(&e)
        }
    }
}
