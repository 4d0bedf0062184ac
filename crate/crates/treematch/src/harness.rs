//! Experiment driver: adaptive hard instances, the ordinal hardness pair,
//! configurable suites, and JSON reports.
//!
//! Reports carry exact rationals; JSON renders them as `"p/q"` strings so
//! nothing is lost in interchange. Identical configs and seeds reproduce
//! byte-identical reports once the wall-clock `ms` field is excluded, which
//! is why [`Report::to_json`] takes a flag for it.
//!
//! The adaptive adversary plays the caterpillar construction: at each spine
//! vertex it sends two pendant children, reads the public fractions on those
//! two edges, and advances the spine into the child holding the weakly
//! larger fraction (ties go to the later arrival). It never inspects
//! algorithm internals, only fractions of arrived edges. It also checks a
//! behavioral assumption behind the matching upper bound: once a spine
//! vertex has seen both of its children, the fraction on the edge that
//! attached it must not drop afterwards. Violations are flagged in
//! `Report.notes`, not failed, because the bound is only claimed for
//! algorithms honoring the assumption.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::Deserialize;
use serde_json::{json, Value};
use thiserror::Error;

use crate::fracstate::{FracState, StateError};
use crate::instance::{
    gen_hard_mcm_static, gen_hard_mwm, gen_random_forest, gen_random_growing_tree,
    geometric_base_auto, parse_stream, validate_model, ArrivalModel, EdgeId, HardMwmVariant,
    InstanceError, InstanceStream, VertexId,
};
use crate::matcher::{run_stream, AlgoError, GreedyMatcher, OnlineMatcher, RunArtifacts};
use crate::mcm_forest::ForestMatcher;
use crate::mcm_tree::TreeMatcher;
use crate::mwm_tree::{ordinal_signature, Decision, MwmMatcher};
use crate::oracle::{max_cardinality_forest, max_weight_forest, OfflineGraph, OracleError};
use crate::pd_verify::{audit_run, profile_for, AuditEntry};
use crate::rational::{format_rational, parse_rational, rat, rint, Rational};
use crate::rounding::{
    self, exact_distribution_bounded, merge_triples_dominated, monte_carlo, RoundError,
};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("config: {0}")]
    Config(String),
    #[error("io: {0}")]
    Io(String),
    #[error(transparent)]
    Algo(#[from] AlgoError),
    #[error(transparent)]
    Instance(#[from] InstanceError),
    #[error(transparent)]
    State(#[from] StateError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Round(#[from] RoundError),
}

/// Algorithm ids accepted across the harness and CLI.
pub const ALGO_IDS: [&str; 4] = ["mcm-tree", "mcm-forest", "mwm", "greedy"];

pub fn make_matcher(algo: &str) -> Result<Box<dyn OnlineMatcher>, HarnessError> {
    match algo {
        "mcm-tree" => Ok(Box::new(TreeMatcher::new())),
        "mcm-forest" => Ok(Box::new(ForestMatcher::new())),
        "mwm" => Ok(Box::new(MwmMatcher::new())),
        "greedy" => Ok(Box::new(GreedyMatcher::new())),
        other => Err(HarnessError::Usage(format!(
            "unknown algorithm `{other}` (expected one of {})",
            ALGO_IDS.join(", ")
        ))),
    }
}

/// Rejects instance/algorithm pairings up front, so picking the wrong
/// algorithm surfaces as a usage error rather than a mid-run model
/// violation. Weighted/unweighted mismatches are caught separately by
/// `run_stream`.
pub fn check_dispatch(algo: &str, stream: &InstanceStream) -> Result<(), HarnessError> {
    let ok = match algo {
        "mcm-tree" | "mwm" => matches!(stream.model, ArrivalModel::GrowingTree),
        "mcm-forest" => matches!(
            stream.model,
            ArrivalModel::GrowingTree | ArrivalModel::Forest
        ),
        _ => true,
    };
    if ok {
        Ok(())
    } else {
        Err(HarnessError::Usage(format!(
            "algorithm `{algo}` does not serve instances declared `model {}`",
            stream.model.tag()
        )))
    }
}

/// One Monte Carlo summary row per edge.
#[derive(Debug, Clone)]
pub struct McRow {
    pub edge: EdgeId,
    pub x: Rational,
    pub count: u64,
    pub trials: u64,
    pub z: f64,
}

#[derive(Debug, Clone)]
pub struct Report {
    pub instance: String,
    pub algo: String,
    pub alg: Rational,
    pub opt: Rational,
    pub ratio: Rational,
    pub audits: Vec<AuditEntry>,
    pub monte_carlo: Option<Vec<McRow>>,
    pub seed: Option<u64>,
    pub ms: u128,
    pub notes: Vec<String>,
}

impl Report {
    pub fn all_audits_pass(&self) -> bool {
        self.audits.iter().all(|a| a.pass)
    }

    /// JSON rendering. `include_ms` selects whether the wall-clock field is
    /// present; leave it out when comparing reports for reproducibility.
    pub fn to_json(&self, include_ms: bool) -> Value {
        let audits: Vec<Value> = self
            .audits
            .iter()
            .map(|a| {
                let mut row = json!({
                    "event": a.event,
                    "check": a.check,
                    "pass": a.pass,
                });
                if !a.pass {
                    row["detail"] = json!(a.detail);
                }
                row
            })
            .collect();
        let mut out = json!({
            "instance": self.instance,
            "algo": self.algo,
            "alg": format_rational(&self.alg),
            "opt": format_rational(&self.opt),
            "ratio": format_rational(&self.ratio),
            "audits": audits,
            "seed": self.seed,
            "notes": self.notes,
        });
        if let Some(rows) = &self.monte_carlo {
            let rows: Vec<Value> = rows
                .iter()
                .map(|r| {
                    json!({
                        "edge": r.edge.0,
                        "x": format_rational(&r.x),
                        "freq": format_rational(&(rint(r.count as i64) / rint(r.trials as i64))),
                        "trials": r.trials,
                        "z": r.z,
                    })
                })
                .collect();
            out["monte_carlo"] = Value::Array(rows);
        }
        if include_ms {
            out["ms"] = json!(self.ms);
        }
        out
    }
}

fn z_score(count: u64, trials: u64, x: &Rational) -> f64 {
    use num_traits::ToPrimitive;
    let n = trials as f64;
    let xf = x.to_f64().unwrap_or(0.0);
    let var = n * xf * (1.0 - xf);
    if var == 0.0 {
        return 0.0;
    }
    (count as f64 - n * xf) / var.sqrt()
}

/// Compiles the trace, samples it, and attaches per-edge rows plus a
/// dominance note; with `exact` set, also enumerates the full distribution
/// and verifies every marginal.
fn attach_monte_carlo(
    report: &mut Report,
    state: &FracState,
    trials: u64,
    seed: u64,
    exact: bool,
) -> Result<(), HarnessError> {
    let plan = rounding::compile(state)?;
    match merge_triples_dominated(&plan) {
        Ok(()) => report.notes.push("merge triples dominated".into()),
        Err(e) => report.notes.push(format!("merge triples not dominated: {e}")),
    }
    if trials > 0 {
        let summary = monte_carlo(&plan, trials, seed);
        let mut rows = Vec::with_capacity(plan.n_edges);
        for i in 0..plan.n_edges {
            let e = EdgeId(i as u32);
            let x = plan.final_x[i].clone();
            let count = summary.match_counts[i];
            rows.push(McRow {
                edge: e,
                x: x.clone(),
                count,
                trials,
                z: z_score(count, trials, &x),
            });
        }
        report.monte_carlo = Some(rows);
        report.seed = Some(seed);
    }
    if exact {
        let dist = exact_distribution_bounded(&plan, 64)?;
        report
            .notes
            .push(format!("exact distribution verified over {} steps", dist.per_step.len()));
    }
    Ok(())
}

fn oracle_opt(stream_weighted: bool, graph: &OfflineGraph) -> Result<Rational, HarnessError> {
    if stream_weighted {
        Ok(max_weight_forest(graph)?)
    } else {
        Ok(rint(max_cardinality_forest(graph)? as i64))
    }
}

fn finish_report(
    mut report: Report,
    artifacts: &RunArtifacts,
    audit: bool,
) -> Result<Report, HarnessError> {
    if audit {
        match profile_for(artifacts.algo) {
            Some(profile) => {
                let audit_report = audit_run(artifacts, &profile)?;
                report.audits = audit_report.entries;
            }
            None => report
                .notes
                .push(format!("no audit profile for {}", artifacts.algo)),
        }
    }
    Ok(report)
}

/// Runs an algorithm over a prebuilt stream and assembles the full report.
pub fn run_report(
    algo: &str,
    stream: &InstanceStream,
    instance_label: &str,
    audit: bool,
    trials: Option<u64>,
    exact: bool,
    seed: u64,
) -> Result<Report, HarnessError> {
    let started = std::time::Instant::now();
    check_dispatch(algo, stream)?;
    let mut matcher = make_matcher(algo)?;
    run_stream(matcher.as_mut(), stream)?;
    let artifacts = matcher.artifacts_cloned();
    let graph = OfflineGraph::from_stream(stream);
    let opt = oracle_opt(stream.weighted, &graph)?;
    let alg = artifacts.state.primal_value().clone();
    let ratio = if opt == rint(0) {
        rint(1)
    } else {
        &alg / &opt
    };
    let mut report = Report {
        instance: instance_label.to_string(),
        algo: algo.to_string(),
        alg,
        opt,
        ratio,
        audits: Vec::new(),
        monte_carlo: None,
        seed: None,
        ms: 0,
        notes: Vec::new(),
    };
    report = finish_report(report, &artifacts, audit)?;
    if trials.is_some() || exact {
        attach_monte_carlo(&mut report, &artifacts.state, trials.unwrap_or(0), seed, exact)?;
    }
    report.ms = started.elapsed().as_millis();
    Ok(report)
}

/// Upper bound on the caterpillar ratio for well-behaved algorithms.
pub fn adaptive_bound(n: usize) -> Rational {
    rat(2, 3) + rat(2, 3 * n as i64)
}

/// Drives `matcher` through the adaptive caterpillar with `n` spine
/// stations (2n edges). Generation and execution interleave: both children
/// of the current spine vertex are sent, their public fractions are read,
/// and the spine advances into the child with the weakly larger fraction,
/// ties to the later arrival.
pub fn run_adaptive_hard_mcm(
    matcher: &mut dyn OnlineMatcher,
    n: usize,
) -> Result<Report, HarnessError> {
    if n == 0 {
        return Err(HarnessError::Usage("adaptive instance needs n >= 1".into()));
    }
    let started = std::time::Instant::now();
    let mut spine = VertexId(0);
    let mut next_id = 1u32;
    // Edge that attached the current spine vertex, and the fraction each
    // attaching edge held once its head had seen both children.
    let mut prev_edge: Option<EdgeId> = None;
    let mut settled: Vec<(EdgeId, Rational)> = Vec::new();
    for _ in 1..=n {
        let a = VertexId(next_id);
        let b = VertexId(next_id + 1);
        next_id += 2;
        let ea = matcher.process(spine, a, None)?;
        let eb = matcher.process(spine, b, None)?;
        if let Some(pe) = prev_edge.take() {
            settled.push((pe, matcher.state().x(pe).clone()));
        }
        let xa = matcher.state().x(ea);
        let xb = matcher.state().x(eb);
        let (child, edge) = if xa > xb { (a, ea) } else { (b, eb) };
        prev_edge = Some(edge);
        spine = child;
    }
    let mut notes = Vec::new();
    let reasonable = settled
        .iter()
        .all(|(e, snap)| matcher.state().x(*e) == snap);
    if !reasonable {
        notes.push(
            "flagged: fraction on a spine-attaching edge dropped after its head's children arrived"
                .into(),
        );
    }
    let artifacts = matcher.artifacts_cloned();
    let state = &artifacts.state;
    let edges: Vec<(usize, usize)> = (0..state.n_edges())
        .map(|i| {
            let (u, v) = state.endpoints(EdgeId(i as u32));
            (u.0 as usize, v.0 as usize)
        })
        .collect();
    let weights = vec![rint(1); edges.len()];
    let graph = OfflineGraph::from_edges(next_id as usize, &edges, weights);
    let opt = rint(max_cardinality_forest(&graph)? as i64);
    let alg = state.primal_value().clone();
    let ratio = &alg / &opt;
    if reasonable && ratio > adaptive_bound(n) {
        notes.push("ratio above the adaptive bound despite well-behaved disposals".into());
    }
    let mut report = Report {
        instance: format!("adaptive-hard-mcm(n={n})"),
        algo: artifacts.algo.to_string(),
        alg,
        opt,
        ratio,
        audits: Vec::new(),
        monte_carlo: None,
        seed: None,
        ms: 0,
        notes,
    };
    report = finish_report(report, &artifacts, true)?;
    report.ms = started.elapsed().as_millis();
    Ok(report)
}

/// Reference curve for the ordinal hardness family: the ratio any ordinal
/// algorithm concedes on one of the two indistinguishable ladders, probed at
/// a chosen delta.
pub fn mwm_bound_curve(n: usize, delta: &Rational, eps: &Rational) -> Rational {
    let n_r = rint(n as i64);
    let numer = rat(3, 2) + delta + rint(n as i64 - 1) * eps;
    let denom = &n_r + rint((n * n - n + 2) as i64) * eps / rint(2);
    (rat(1, 2) - delta) + numer / denom
}

#[derive(Debug)]
pub struct HardMwmOutcome {
    pub additive: Report,
    pub geometric: Report,
    pub signatures_identical: bool,
    pub signature: Vec<Decision>,
    pub epsilon: Rational,
    pub base: Rational,
    pub delta: Rational,
    pub bound_probe: Rational,
}

/// Runs the weighted algorithm on the additive and geometric ladders, which
/// any ordinal algorithm cannot tell apart, and reports both ratios plus the
/// bound-curve probe.
pub fn run_hard_mwm(
    n: usize,
    eps: &Rational,
    base: Option<Rational>,
    delta: &Rational,
) -> Result<HardMwmOutcome, HarnessError> {
    let base = match base {
        Some(c) => c,
        None => geometric_base_auto(n),
    };
    let i1 = gen_hard_mwm(n, HardMwmVariant::Additive, eps)?;
    let i2 = gen_hard_mwm(n, HardMwmVariant::Geometric, &base)?;
    let sig1 = ordinal_signature(&i1)?;
    let sig2 = ordinal_signature(&i2)?;
    let identical = sig1 == sig2;
    let label1 = format!("hard-mwm-additive(n={n},eps={})", format_rational(eps));
    let label2 = format!("hard-mwm-geometric(n={n},base={})", format_rational(&base));
    let mut additive = run_report("mwm", &i1, &label1, true, None, false, 0)?;
    let mut geometric = run_report("mwm", &i2, &label2, true, None, false, 0)?;
    let verdict = format!(
        "ordinal signatures identical across ladders: {identical} ({} decisions)",
        sig1.len()
    );
    additive.notes.push(verdict.clone());
    geometric.notes.push(verdict);
    let bound_probe = mwm_bound_curve(n, delta, eps);
    Ok(HardMwmOutcome {
        additive,
        geometric,
        signatures_identical: identical,
        signature: sig1,
        epsilon: eps.clone(),
        base,
        delta: delta.clone(),
        bound_probe,
    })
}

/// Where a suite item's instance comes from.
#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum InstanceSpec {
    /// Read an instance file from disk.
    File { path: String },
    /// Random growing tree with `n` edges.
    Tree {
        n: usize,
        seed: u64,
        #[serde(default)]
        weighted: bool,
    },
    /// Random forest with `n` edges; `merge_bias` is the probability that
    /// an arrival attempts to join two existing trees, as a "p/q" string.
    Forest {
        n: usize,
        seed: u64,
        merge_bias: Option<String>,
    },
    /// Static caterpillar with the spine fixed in advance.
    HardMcm { n: usize },
    /// Adaptive caterpillar; the adversary reacts to the algorithm.
    AdaptiveMcm { n: usize },
    /// Additive weight ladder from the ordinal hardness pair.
    HardMwm { n: usize, eps: Option<String> },
}

fn parse_rational_field(field: &str, value: &str) -> Result<Rational, HarnessError> {
    parse_rational(value).map_err(|e| HarnessError::Config(format!("{field}: {e}")))
}

/// Builds the stream for a spec, or signals the adaptive case (which has no
/// prebuilt stream) by returning the station count instead.
pub fn realize_instance(
    spec: &InstanceSpec,
) -> Result<Result<(InstanceStream, String), usize>, HarnessError> {
    match spec {
        InstanceSpec::File { path } => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| HarnessError::Io(format!("{path}: {e}")))?;
            let stream = parse_stream(&text)?;
            validate_model(&stream)?;
            Ok(Ok((stream, path.clone())))
        }
        InstanceSpec::Tree { n, seed, weighted } => {
            let stream = gen_random_growing_tree(*n, *weighted, *seed)?;
            let label = format!("random-tree(n={n},seed={seed},weighted={weighted})");
            Ok(Ok((stream, label)))
        }
        InstanceSpec::Forest { n, seed, merge_bias } => {
            let bias = match merge_bias {
                Some(text) => parse_rational_field("merge_bias", text)?,
                None => rat(1, 2),
            };
            let stream = gen_random_forest(*n, &bias, *seed)?;
            let label = format!(
                "random-forest(n={n},seed={seed},merge_bias={})",
                format_rational(&bias)
            );
            Ok(Ok((stream, label)))
        }
        InstanceSpec::HardMcm { n } => {
            let stream = gen_hard_mcm_static(*n)?;
            Ok(Ok((stream, format!("hard-mcm-static(n={n})"))))
        }
        InstanceSpec::AdaptiveMcm { n } => Ok(Err(*n)),
        InstanceSpec::HardMwm { n, eps } => {
            let eps = match eps {
                Some(text) => parse_rational_field("eps", text)?,
                None => rat(1, 1000),
            };
            let stream = gen_hard_mwm(*n, HardMwmVariant::Additive, &eps)?;
            let label = format!("hard-mwm-additive(n={n},eps={})", format_rational(&eps));
            Ok(Ok((stream, label)))
        }
    }
}

fn default_audit() -> bool {
    true
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SuiteItem {
    pub name: Option<String>,
    pub algo: String,
    pub instance: InstanceSpec,
    #[serde(default = "default_audit")]
    pub audit: bool,
    pub trials: Option<u64>,
    #[serde(default)]
    pub exact: bool,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug)]
pub struct ItemOutcome {
    pub name: String,
    pub result: Result<Report, String>,
}

impl ItemOutcome {
    pub fn passed(&self) -> bool {
        match &self.result {
            Ok(r) => r.all_audits_pass(),
            Err(_) => false,
        }
    }

    pub fn to_json(&self, include_ms: bool) -> Value {
        match &self.result {
            Ok(r) => json!({"name": self.name, "report": r.to_json(include_ms)}),
            Err(e) => json!({"name": self.name, "error": e}),
        }
    }
}

pub fn parse_suite_config(text: &str) -> Result<Vec<SuiteItem>, HarnessError> {
    serde_json::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))
}

fn run_suite_item(item: &SuiteItem) -> Result<Report, HarnessError> {
    match realize_instance(&item.instance)? {
        Ok((stream, label)) => run_report(
            &item.algo,
            &stream,
            &label,
            item.audit,
            item.trials,
            item.exact,
            item.seed,
        ),
        Err(n) => {
            let mut matcher = make_matcher(&item.algo)?;
            let mut report = run_adaptive_hard_mcm(matcher.as_mut(), n)?;
            if item.trials.is_some() || item.exact {
                let state = matcher.state().clone();
                attach_monte_carlo(
                    &mut report,
                    &state,
                    item.trials.unwrap_or(0),
                    item.seed,
                    item.exact,
                )?;
            }
            Ok(report)
        }
    }
}

/// Runs every item, in parallel, preserving input order in the output.
/// Failures are collected per item; the suite always completes.
pub fn run_suite(items: &[SuiteItem]) -> Vec<ItemOutcome> {
    let n = items.len();
    let mut slots: Vec<Option<ItemOutcome>> = Vec::with_capacity(n);
    slots.resize_with(n, || None);
    let slots = Mutex::new(slots);
    let next = AtomicUsize::new(0);
    let workers = std::thread::available_parallelism()
        .map(|p| p.get())
        .unwrap_or(4)
        .min(n.max(1));
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= n {
                    break;
                }
                let item = &items[i];
                let name = item.name.clone().unwrap_or_else(|| format!("item-{i}"));
                let result = run_suite_item(item).map_err(|e| e.to_string());
                let outcome = ItemOutcome { name, result };
                slots.lock().unwrap()[i] = Some(outcome);
            });
        }
    });
    slots
        .into_inner()
        .unwrap()
        .into_iter()
        .map(|o| o.expect("every slot filled"))
        .collect()
}
