//! Online primal-dual auditor. Replays a run's trace without trusting
//! the algorithm, then checks two certificates after every event:
//! reverse weak duality (optionally strengthened by a per-component
//! surplus) and approximate dual feasibility at the algorithm's ratio.
//! A clean audit plus the standard LP argument is what certifies the
//! competitive ratio.

use std::collections::HashMap;

use crate::fracstate::{FracState, StateError, TraceCursor};
use crate::instance::{EdgeId, UnionFind};
use crate::matcher::{DualSnapshot, RunArtifacts};
use crate::rational::{format_rational, rat, rint, Rational};

/// What to verify, per algorithm. `surplus` is required per component
/// when `per_component` is set, globally otherwise. Components holding a
/// single edge carry no duals yet and are skipped entirely when
/// `skip_single_edge_components` is set.
#[derive(Debug, Clone)]
pub struct AuditProfile {
    pub ratio: Rational,
    pub surplus: Rational,
    pub per_component: bool,
    pub skip_single_edge_components: bool,
}

/// The audit profile matching an algorithm id, or None for baselines
/// that certify nothing.
pub fn profile_for(algo: &str) -> Option<AuditProfile> {
    match algo {
        "mcm-tree" => Some(AuditProfile {
            ratio: rat(2, 3),
            surplus: rint(0),
            per_component: false,
            skip_single_edge_components: false,
        }),
        "mcm-forest" => Some(AuditProfile {
            ratio: rat(5, 8),
            surplus: rat(2, 8),
            per_component: true,
            skip_single_edge_components: true,
        }),
        "mwm" => Some(AuditProfile {
            ratio: rat(1, 2),
            surplus: rint(0),
            per_component: false,
            skip_single_edge_components: false,
        }),
        _ => None,
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AuditEntry {
    /// 1-based event index.
    pub event: usize,
    pub check: &'static str,
    pub pass: bool,
    /// Failure explanation; empty on pass.
    pub detail: String,
}

#[derive(Debug, Clone, Default)]
pub struct AuditReport {
    pub entries: Vec<AuditEntry>,
}

impl AuditReport {
    pub fn all_pass(&self) -> bool {
        self.entries.iter().all(|e| e.pass)
    }

    pub fn failures(&self) -> impl Iterator<Item = &AuditEntry> {
        self.entries.iter().filter(|e| !e.pass)
    }

    fn push(&mut self, event: usize, check: &'static str, result: Result<(), String>) {
        match result {
            Ok(()) => self.entries.push(AuditEntry {
                event,
                check,
                pass: true,
                detail: String::new(),
            }),
            Err(detail) => self.entries.push(AuditEntry {
                event,
                check,
                pass: false,
                detail,
            }),
        }
    }
}

/// Component view the auditor maintains itself from arrived edges.
struct Components {
    uf: UnionFind,
    edge_count: HashMap<u32, u32>,
}

impl Components {
    fn new() -> Self {
        Components {
            uf: UnionFind::new(),
            edge_count: HashMap::new(),
        }
    }

    fn add_edge(&mut self, state: &FracState, e: EdgeId) {
        let (u, v) = state.endpoints(e);
        self.uf.ensure(u.0);
        self.uf.ensure(v.0);
        let ru = self.uf.find(u.0);
        let rv = self.uf.find(v.0);
        let cu = self.edge_count.remove(&ru).unwrap_or(0);
        let cv = if rv == ru {
            0
        } else {
            self.edge_count.remove(&rv).unwrap_or(0)
        };
        let root = self.uf.union(u.0, v.0);
        self.edge_count.insert(root, cu + cv + 1);
    }

    fn root_of_edge(&self, state: &FracState, e: EdgeId) -> u32 {
        self.uf.find(state.endpoints(e).0 .0)
    }

    fn is_single_edge(&self, root: u32) -> bool {
        self.edge_count.get(&root) == Some(&1)
    }
}

/// Weak duality against a state: P >= D + surplus, globally or per
/// component. D counts vertex duals plus edge-parked uncertain mass.
fn check_weak_duality(
    state: &FracState,
    comps: &Components,
    snap: &DualSnapshot,
    profile: &AuditProfile,
) -> Result<(), String> {
    if !profile.per_component {
        let p = state.primal_value().clone();
        let d = snap.dual_value();
        if p >= &d + &profile.surplus {
            return Ok(());
        }
        return Err(format!(
            "P = {} < D + surplus = {} + {}",
            format_rational(&p),
            format_rational(&d),
            format_rational(&profile.surplus)
        ));
    }
    let mut primal: HashMap<u32, Rational> = HashMap::new();
    let mut dual: HashMap<u32, Rational> = HashMap::new();
    for i in 0..state.n_edges() {
        let e = EdgeId(i as u32);
        let root = comps.root_of_edge(state, e);
        *primal.entry(root).or_insert_with(|| rint(0)) += state.x(e) * state.weight(e);
        if let Some(u) = snap.uncertain.get(&e) {
            *dual.entry(root).or_insert_with(|| rint(0)) += u;
        }
    }
    for (v, a) in &snap.alpha {
        let root = comps.uf.find(v.0);
        *dual.entry(root).or_insert_with(|| rint(0)) += a;
    }
    for (root, d) in &dual {
        if comps.is_single_edge(*root) && profile.skip_single_edge_components {
            continue;
        }
        let p = primal.get(root).cloned().unwrap_or_else(|| rint(0));
        if p < d + &profile.surplus {
            return Err(format!(
                "component of vertex {root}: P = {} < D + surplus = {} + {}",
                format_rational(&p),
                format_rational(d),
                format_rational(&profile.surplus)
            ));
        }
    }
    // Components with primal mass but no duals at all still owe the
    // surplus (unless exempt).
    for (root, p) in &primal {
        if dual.contains_key(root) {
            continue;
        }
        if comps.is_single_edge(*root) && profile.skip_single_edge_components {
            continue;
        }
        if *p < profile.surplus {
            return Err(format!(
                "dual-free component of vertex {root}: P = {} < surplus {}",
                format_rational(p),
                format_rational(&profile.surplus)
            ));
        }
    }
    Ok(())
}

/// Approximate dual feasibility: every arrived edge is covered to
/// ratio * weight by its endpoint duals plus its own uncertain mass.
fn check_feasibility(
    state: &FracState,
    comps: &Components,
    snap: &DualSnapshot,
    profile: &AuditProfile,
) -> Result<(), String> {
    let mut bad = Vec::new();
    for i in 0..state.n_edges() {
        let e = EdgeId(i as u32);
        if profile.skip_single_edge_components
            && comps.is_single_edge(comps.root_of_edge(state, e))
        {
            continue;
        }
        let (u, v) = state.endpoints(e);
        let have = snap.alpha_of(u) + snap.alpha_of(v) + snap.uncertain_of(e);
        let need = &profile.ratio * state.weight(e);
        if have < need {
            bad.push(format!(
                "{e}: {} < {}",
                format_rational(&have),
                format_rational(&need)
            ));
        }
    }
    if bad.is_empty() {
        Ok(())
    } else {
        Err(format!("uncovered edges: {}", bad.join("; ")))
    }
}

/// Replays the run and applies both checks after every event. Returns
/// the per-event matrix; a replay divergence (tampered trace or loads)
/// surfaces as a hard error rather than an entry.
pub fn audit_run(run: &RunArtifacts, profile: &AuditProfile) -> Result<AuditReport, StateError> {
    if run.snapshots.len() != run.state.n_edges() {
        return Err(StateError::ReplayMismatch(format!(
            "{} snapshots for {} events",
            run.snapshots.len(),
            run.state.n_edges()
        )));
    }
    let mut report = AuditReport::default();
    let mut cursor = TraceCursor::new(&run.state);
    let mut comps = Components::new();
    let mut event = 0usize;
    while let Some(e) = cursor.advance()? {
        event += 1;
        let state = cursor.state();
        comps.add_edge(state, e);
        let snap = &run.snapshots[event - 1];
        report.push(
            event,
            "weak-duality",
            check_weak_duality(state, &comps, snap, profile),
        );
        report.push(
            event,
            "feasibility",
            check_feasibility(state, &comps, snap, profile),
        );
    }
    cursor.finish()?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instance::gen_random_growing_tree;
    use crate::matcher::{run_stream, OnlineMatcher};
    use crate::mcm_tree::TreeMatcher;
    use crate::rational::rat;

    fn tree_run(seed: u64, edges: usize) -> RunArtifacts {
        let s = gen_random_growing_tree(edges, false, seed).unwrap();
        let mut m = TreeMatcher::new();
        run_stream(&mut m, &s).unwrap();
        m.into_artifacts()
    }

    #[test]
    fn tree_runs_pass_both_checks_every_event() {
        let profile = profile_for("mcm-tree").unwrap();
        for seed in 0..10u64 {
            let run = tree_run(seed, 80);
            let report = audit_run(&run, &profile).unwrap();
            assert_eq!(report.entries.len(), 160);
            assert!(report.all_pass(), "seed {seed}");
        }
    }

    #[test]
    fn corrupted_duals_fail_feasibility() {
        let profile = profile_for("mcm-tree").unwrap();
        let mut run = tree_run(3, 40);
        let last = run.snapshots.last_mut().unwrap();
        last.alpha.clear();
        let report = audit_run(&run, &profile).unwrap();
        assert!(!report.all_pass());
        let failed: Vec<_> = report.failures().collect();
        assert!(failed.iter().any(|f| f.check == "feasibility"));
        assert!(failed
            .iter()
            .any(|f| f.check == "feasibility" && f.detail.contains("uncovered")));
        // Only the tampered final event fails.
        assert!(failed.iter().all(|f| f.event == 40));
    }

    #[test]
    fn inflated_duals_fail_weak_duality() {
        let profile = profile_for("mcm-tree").unwrap();
        let mut run = tree_run(5, 30);
        let last = run.snapshots.last_mut().unwrap();
        for a in last.alpha.values_mut() {
            *a += rint(1);
        }
        let report = audit_run(&run, &profile).unwrap();
        assert!(report
            .failures()
            .any(|f| f.check == "weak-duality" && f.event == 30));
    }

    #[test]
    fn tampered_trace_is_a_hard_error() {
        let profile = profile_for("mcm-tree").unwrap();
        let mut run = tree_run(7, 20);
        // Snapshot count mismatch is rejected before any replay.
        run.snapshots.pop();
        assert!(audit_run(&run, &profile).is_err());
    }

    #[test]
    fn profiles_exist_for_real_algorithms_only() {
        assert!(profile_for("mcm-tree").is_some());
        assert!(profile_for("mcm-forest").is_some());
        assert!(profile_for("mwm").is_some());
        assert!(profile_for("greedy").is_none());
        assert_eq!(profile_for("mcm-forest").unwrap().surplus, rat(1, 4));
    }
}
