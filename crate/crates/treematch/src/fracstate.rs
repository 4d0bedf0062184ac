//! Mutable fractional-matching engine. Enforces the matching polytope and
//! free disposal, and records an append-only trace in a two-phase time
//! convention: the t-th arrival may first lower other edges (all such
//! steps carry time 2t-1) and then performs its single match step at
//! time 2t. Randomized rounding and the primal-dual auditor both work
//! from this trace alone.

use std::fmt::Write as _;

use thiserror::Error;

use crate::instance::{EdgeId, VertexId};
use crate::rational::{format_rational, rint, Rational};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum StateError {
    #[error("arrival {0} is still open; match it before starting another")]
    UnfinishedArrival(EdgeId),
    #[error("no arrival is open")]
    NoOpenArrival,
    #[error("edge {0} is not known to the state")]
    UnknownEdge(EdgeId),
    #[error("edge {edge}: cannot raise fraction from {from} to {to} by disposal")]
    IllegalIncrease { edge: EdgeId, from: String, to: String },
    #[error("edge {edge}: disposal needs a positive current fraction")]
    DisposeFromZero { edge: EdgeId },
    #[error("vertex {vertex}: load {load} would exceed 1")]
    PolytopeViolation { vertex: VertexId, load: String },
    #[error("match fraction {0} is outside [0, 1]")]
    BadFraction(String),
    #[error("{0}")]
    BadReplayRecord(String),
    #[error("trace replay diverged: {0}")]
    ReplayMismatch(String),
}

/// Record of a trivial merge processed by order-swapped replay: the
/// arriving edge e is treated as a growing edge into the larger tree
/// (parent `grow_parent`), then the pre-existing isolated edge `eprime`
/// is re-processed as a growing edge hanging off their shared endpoint.
/// Within that second step, e itself may be lowered (`hyp_dispose`).
/// The sampler reproduces this order swap; the state change is atomic:
/// x(e) becomes `final_edge_fraction()` and x(eprime) becomes
/// `eprime_gamma`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrivialMergeReplay {
    pub grow_parent: VertexId,
    /// Load of `grow_parent` just before the replayed match of e (real
    /// disposals in the larger tree have already happened).
    pub grow_parent_load: Rational,
    /// Fraction the replay matches to e before any replayed lowering.
    pub grow_gamma: Rational,
    /// Replayed lowering of e, as (delta, lambda) with lambda equal to
    /// `grow_gamma`. None when e stays at `grow_gamma`.
    pub hyp_dispose: Option<(Rational, Rational)>,
    /// The isolated edge whose component is being merged away.
    pub eprime: EdgeId,
    /// Final fraction of `eprime` (a decrease from its prior value 1).
    pub eprime_gamma: Rational,
}

impl TrivialMergeReplay {
    /// Final fraction of the arriving edge after the replayed lowering.
    pub fn final_edge_fraction(&self) -> Rational {
        match &self.hyp_dispose {
            Some((delta, _)) => &self.grow_gamma - delta,
            None => self.grow_gamma.clone(),
        }
    }
}

/// Parameters an algorithm passes to [`FracState::match_trivial`]; the
/// engine fills in the recorded load itself.
#[derive(Debug, Clone)]
pub struct TrivialReplaySpec {
    pub grow_parent: VertexId,
    pub grow_gamma: Rational,
    pub hyp_dispose: Option<(Rational, Rational)>,
    pub eprime: EdgeId,
    pub eprime_gamma: Rational,
}

/// Pre-match context stored on every match step. Loads are recorded by
/// the engine from its own caches at match time, so the rounding stage
/// never recomputes algorithm state.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MatchContext {
    Isolated,
    Growing {
        parent: VertexId,
        parent_load: Rational,
    },
    /// Non-trivial merge; loads follow the arrival's endpoint order.
    Merge {
        load_u: Rational,
        load_v: Rational,
    },
    TrivialMerge(TrivialMergeReplay),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StepKind {
    Dispose {
        edge: EdgeId,
        delta: Rational,
        lambda: Rational,
    },
    Match {
        edge: EdgeId,
        gamma: Rational,
        context: MatchContext,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceStep {
    pub time: u64,
    pub kind: StepKind,
}

/// Fractional matching state over sequentially arriving edges.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FracState {
    x: Vec<Rational>,
    endpoints: Vec<(VertexId, VertexId)>,
    weights: Vec<Rational>,
    load: Vec<Rational>,
    trace: Vec<TraceStep>,
    primal: Rational,
    /// Open arrival awaiting its match step, if any.
    open: Option<EdgeId>,
}

impl Default for FracState {
    fn default() -> Self {
        FracState::new()
    }
}

impl FracState {
    pub fn new() -> Self {
        FracState {
            x: Vec::new(),
            endpoints: Vec::new(),
            weights: Vec::new(),
            load: Vec::new(),
            trace: Vec::new(),
            primal: rint(0),
            open: None,
        }
    }

    /// Number of arrived edges.
    pub fn n_edges(&self) -> usize {
        self.x.len()
    }

    /// 1-based index of the arrival currently being processed.
    fn current_t(&self) -> u64 {
        self.x.len() as u64
    }

    pub fn x(&self, e: EdgeId) -> &Rational {
        &self.x[e.0 as usize]
    }

    pub fn endpoints(&self, e: EdgeId) -> (VertexId, VertexId) {
        self.endpoints[e.0 as usize]
    }

    pub fn weight(&self, e: EdgeId) -> &Rational {
        &self.weights[e.0 as usize]
    }

    pub fn load(&self, v: VertexId) -> Rational {
        self.load
            .get(v.0 as usize)
            .cloned()
            .unwrap_or_else(|| rint(0))
    }

    pub fn trace(&self) -> &[TraceStep] {
        &self.trace
    }

    /// Exact primal value, maintained incrementally.
    pub fn primal_value(&self) -> &Rational {
        &self.primal
    }

    /// Recomputes the primal value from scratch (test cross-check).
    pub fn primal_value_recomputed(&self) -> Rational {
        let mut p = rint(0);
        for (xe, w) in self.x.iter().zip(&self.weights) {
            p += xe * w;
        }
        p
    }

    fn check_edge(&self, e: EdgeId) -> Result<(), StateError> {
        if (e.0 as usize) < self.x.len() {
            Ok(())
        } else {
            Err(StateError::UnknownEdge(e))
        }
    }

    fn ensure_vertex(&mut self, v: VertexId) {
        while self.load.len() <= v.0 as usize {
            self.load.push(rint(0));
        }
    }

    /// Opens arrival step t for a new edge; subsequent disposals log at
    /// time 2t-1 and the single match step closes the arrival at 2t.
    /// The weight defaults to 1 for unweighted instances.
    pub fn begin_arrival(
        &mut self,
        u: VertexId,
        v: VertexId,
        weight: Option<Rational>,
    ) -> Result<EdgeId, StateError> {
        if let Some(open) = self.open {
            return Err(StateError::UnfinishedArrival(open));
        }
        let e = EdgeId(self.x.len() as u32);
        self.ensure_vertex(u);
        self.ensure_vertex(v);
        self.x.push(rint(0));
        self.endpoints.push((u, v));
        self.weights.push(weight.unwrap_or_else(|| rint(1)));
        self.open = Some(e);
        Ok(e)
    }

    /// Lowers x(edge) to `new` by free disposal, logging delta and the
    /// pre-disposal fraction. Only legal while an arrival is open.
    pub fn dispose_to(&mut self, edge: EdgeId, new: Rational) -> Result<(), StateError> {
        if self.open.is_none() {
            return Err(StateError::NoOpenArrival);
        }
        self.check_edge(edge)?;
        let old = self.x[edge.0 as usize].clone();
        if new > old {
            return Err(StateError::IllegalIncrease {
                edge,
                from: format_rational(&old),
                to: format_rational(&new),
            });
        }
        if new < rint(0) {
            return Err(StateError::BadFraction(format_rational(&new)));
        }
        if old <= rint(0) {
            return Err(StateError::DisposeFromZero { edge });
        }
        let delta = &old - &new;
        self.apply_fraction(edge, new);
        self.trace.push(TraceStep {
            time: 2 * self.current_t() - 1,
            kind: StepKind::Dispose {
                edge,
                delta,
                lambda: old,
            },
        });
        Ok(())
    }

    /// Applies x(edge) := new, updating loads and the primal value.
    fn apply_fraction(&mut self, edge: EdgeId, new: Rational) {
        let i = edge.0 as usize;
        let (u, v) = self.endpoints[i];
        let diff = &new - &self.x[i];
        self.load[u.0 as usize] += &diff;
        self.load[v.0 as usize] += &diff;
        self.primal += &diff * &self.weights[i];
        self.x[i] = new;
    }

    fn check_load(&self, v: VertexId) -> Result<(), StateError> {
        let l = &self.load[v.0 as usize];
        if *l > rint(1) {
            return Err(StateError::PolytopeViolation {
                vertex: v,
                load: format_rational(l),
            });
        }
        Ok(())
    }

    fn close_match(&mut self, gamma: Rational, context: MatchContext) -> Result<(), StateError> {
        let e = self.open.ok_or(StateError::NoOpenArrival)?;
        if gamma < rint(0) || gamma > rint(1) {
            return Err(StateError::BadFraction(format_rational(&gamma)));
        }
        let (u, v) = self.endpoints[e.0 as usize];
        self.apply_fraction(e, gamma.clone());
        if let Err(err) = self.check_load(u).and_then(|_| self.check_load(v)) {
            self.apply_fraction(e, rint(0));
            return Err(err);
        }
        self.trace.push(TraceStep {
            time: 2 * self.current_t(),
            kind: StepKind::Match {
                edge: e,
                gamma,
                context,
            },
        });
        self.open = None;
        Ok(())
    }

    /// Match step for an edge whose endpoints were both fresh.
    pub fn match_isolated(&mut self, gamma: Rational) -> Result<(), StateError> {
        self.close_match(gamma, MatchContext::Isolated)
    }

    /// Match step for an edge hanging a fresh leaf off `parent`. The
    /// parent's pre-match load is recorded for the rounding stage.
    pub fn match_growing(&mut self, parent: VertexId, gamma: Rational) -> Result<(), StateError> {
        let e = self.open.ok_or(StateError::NoOpenArrival)?;
        let (u, v) = self.endpoints[e.0 as usize];
        if parent != u && parent != v {
            return Err(StateError::BadReplayRecord(format!(
                "{parent} is not an endpoint of {e}"
            )));
        }
        let context = MatchContext::Growing {
            parent,
            parent_load: self.load(parent),
        };
        self.close_match(gamma, context)
    }

    /// Match step joining two components that each hold at least two
    /// edges. Both pre-match endpoint loads are recorded in arrival
    /// endpoint order.
    pub fn match_merge(&mut self, gamma: Rational) -> Result<(), StateError> {
        let e = self.open.ok_or(StateError::NoOpenArrival)?;
        let (u, v) = self.endpoints[e.0 as usize];
        let context = MatchContext::Merge {
            load_u: self.load(u),
            load_v: self.load(v),
        };
        self.close_match(gamma, context)
    }

    /// Atomic match step for a trivial merge: sets the arriving edge to
    /// the replay's final fraction and simultaneously lowers the merged
    /// isolated edge. Validates the replay record's internal arithmetic.
    pub fn match_trivial(&mut self, spec: TrivialReplaySpec) -> Result<(), StateError> {
        let e = self.open.ok_or(StateError::NoOpenArrival)?;
        self.check_edge(spec.eprime)?;
        let (u, v) = self.endpoints[e.0 as usize];
        if spec.grow_parent != u && spec.grow_parent != v {
            return Err(StateError::BadReplayRecord(format!(
                "grow parent {} is not an endpoint of {e}",
                spec.grow_parent
            )));
        }
        let shared = if spec.grow_parent == u { v } else { u };
        let (pu, pv) = self.endpoints[spec.eprime.0 as usize];
        if pu != shared && pv != shared {
            return Err(StateError::BadReplayRecord(format!(
                "merged edge {} does not touch shared endpoint {shared}",
                spec.eprime
            )));
        }
        if let Some((delta, lambda)) = &spec.hyp_dispose {
            if *lambda != spec.grow_gamma || *delta <= rint(0) || delta > lambda {
                return Err(StateError::BadReplayRecord(
                    "replayed lowering must take a positive bite out of the match amount".into(),
                ));
            }
        }
        let replay = TrivialMergeReplay {
            grow_parent: spec.grow_parent,
            grow_parent_load: self.load(spec.grow_parent),
            grow_gamma: spec.grow_gamma,
            hyp_dispose: spec.hyp_dispose,
            eprime: spec.eprime,
            eprime_gamma: spec.eprime_gamma.clone(),
        };
        if &replay.grow_gamma + &replay.grow_parent_load > rint(1) {
            return Err(StateError::BadReplayRecord(
                "replayed match amount overfills the grow parent".into(),
            ));
        }
        let final_e = replay.final_edge_fraction();
        if final_e < rint(0) || final_e > rint(1) {
            return Err(StateError::BadFraction(format_rational(&final_e)));
        }
        let old_prime = self.x[replay.eprime.0 as usize].clone();
        if spec.eprime_gamma > old_prime {
            return Err(StateError::IllegalIncrease {
                edge: replay.eprime,
                from: format_rational(&old_prime),
                to: format_rational(&spec.eprime_gamma),
            });
        }
        // Apply the merged edge's decrease first, then run the ordinary
        // match path so the trace gets a single match step.
        self.apply_fraction(replay.eprime, spec.eprime_gamma);
        let gamma = final_e;
        let context = MatchContext::TrivialMerge(replay);
        let result = self.close_match(gamma, context);
        if result.is_err() {
            self.apply_fraction(spec.eprime, old_prime);
        }
        result?;
        let (pu, pv) = self.endpoints[spec.eprime.0 as usize];
        self.check_load(pu)?;
        self.check_load(pv)?;
        Ok(())
    }

    /// Replays this state's trace from scratch, verifying that recorded
    /// match contexts equal the loads the replay observes, and that the
    /// result reproduces this state exactly.
    pub fn verify_replay(&self) -> Result<(), StateError> {
        let mut cursor = TraceCursor::new(self);
        while cursor.advance()?.is_some() {}
        cursor.finish()
    }

    /// Newline-delimited human-readable trace dump for debugging.
    pub fn format_trace(&self) -> String {
        let mut out = String::new();
        for step in &self.trace {
            match &step.kind {
                StepKind::Dispose { edge, delta, lambda } => {
                    let _ = writeln!(
                        out,
                        "{} dispose {edge} delta={} from={}",
                        step.time,
                        format_rational(delta),
                        format_rational(lambda)
                    );
                }
                StepKind::Match { edge, gamma, context } => {
                    let ctx = match context {
                        MatchContext::Isolated => "isolated".to_string(),
                        MatchContext::Growing { parent, parent_load } => {
                            format!("growing parent={parent} load={}", format_rational(parent_load))
                        }
                        MatchContext::Merge { load_u, load_v } => format!(
                            "merge loads={},{}",
                            format_rational(load_u),
                            format_rational(load_v)
                        ),
                        MatchContext::TrivialMerge(r) => format!(
                            "trivial-merge parent={} load={} grow={} lowered={} eprime={} eprime_gamma={}",
                            r.grow_parent,
                            format_rational(&r.grow_parent_load),
                            format_rational(&r.grow_gamma),
                            r.hyp_dispose
                                .as_ref()
                                .map(|(d, _)| format_rational(d))
                                .unwrap_or_else(|| "0".into()),
                            r.eprime,
                            format_rational(&r.eprime_gamma)
                        ),
                    };
                    let _ = writeln!(
                        out,
                        "{} match {edge} gamma={} {ctx}",
                        step.time,
                        format_rational(gamma)
                    );
                }
            }
        }
        out
    }
}

/// Step-by-step trace replayer. Rebuilds the state one arrival at a
/// time, checking every recorded pre-step quantity (disposal lambdas,
/// match-context loads) against what the rebuilt state actually holds.
/// The auditor drives this to inspect the state after each event without
/// trusting the algorithm that produced it.
pub struct TraceCursor<'a> {
    source: &'a FracState,
    rebuilt: FracState,
    cursor: usize,
}

impl<'a> TraceCursor<'a> {
    pub fn new(source: &'a FracState) -> Self {
        TraceCursor {
            source,
            rebuilt: FracState::new(),
            cursor: 0,
        }
    }

    /// The state rebuilt so far (complete through the last advanced
    /// event).
    pub fn state(&self) -> &FracState {
        &self.rebuilt
    }

    /// Replays the next arrival's steps. Returns the arrival's edge id,
    /// or None when the trace is exhausted.
    pub fn advance(&mut self) -> Result<Option<EdgeId>, StateError> {
        let i = self.rebuilt.n_edges();
        if i == self.source.n_edges() {
            return Ok(None);
        }
        let (u, v) = self.source.endpoints[i];
        let weight = self.source.weights[i].clone();
        let e = self.rebuilt.begin_arrival(u, v, Some(weight))?;
        loop {
            let step = self.source.trace.get(self.cursor).ok_or_else(|| {
                StateError::ReplayMismatch(format!("trace ends before {e} is matched"))
            })?;
            self.cursor += 1;
            match &step.kind {
                StepKind::Dispose { edge, delta, lambda } => {
                    if step.time != 2 * (i as u64 + 1) - 1 {
                        return Err(StateError::ReplayMismatch(format!(
                            "dispose at time {} inside arrival {}",
                            step.time,
                            i + 1
                        )));
                    }
                    let old = self.rebuilt.x(*edge).clone();
                    if old != *lambda {
                        return Err(StateError::ReplayMismatch(format!(
                            "recorded pre-disposal fraction {} but state holds {}",
                            format_rational(lambda),
                            format_rational(&old)
                        )));
                    }
                    self.rebuilt.dispose_to(*edge, &old - delta)?;
                }
                StepKind::Match { edge, gamma, context } => {
                    if *edge != e || step.time != 2 * (i as u64 + 1) {
                        return Err(StateError::ReplayMismatch(format!(
                            "match step for {edge} at time {} where {e} was expected",
                            step.time
                        )));
                    }
                    match context {
                        MatchContext::Isolated => self.rebuilt.match_isolated(gamma.clone())?,
                        MatchContext::Growing { parent, parent_load } => {
                            if self.rebuilt.load(*parent) != *parent_load {
                                return Err(StateError::ReplayMismatch(format!(
                                    "recorded parent load {} but replay sees {}",
                                    format_rational(parent_load),
                                    format_rational(&self.rebuilt.load(*parent))
                                )));
                            }
                            self.rebuilt.match_growing(*parent, gamma.clone())?;
                        }
                        MatchContext::Merge { load_u, load_v } => {
                            let (u, v) = self.rebuilt.endpoints(e);
                            if self.rebuilt.load(u) != *load_u
                                || self.rebuilt.load(v) != *load_v
                            {
                                return Err(StateError::ReplayMismatch(
                                    "recorded merge loads disagree with replay".into(),
                                ));
                            }
                            self.rebuilt.match_merge(gamma.clone())?;
                        }
                        MatchContext::TrivialMerge(r) => {
                            if self.rebuilt.load(r.grow_parent) != r.grow_parent_load {
                                return Err(StateError::ReplayMismatch(
                                    "recorded grow-parent load disagrees with replay".into(),
                                ));
                            }
                            if *gamma != r.final_edge_fraction() {
                                return Err(StateError::ReplayMismatch(
                                    "match amount disagrees with replay record".into(),
                                ));
                            }
                            self.rebuilt.match_trivial(TrivialReplaySpec {
                                grow_parent: r.grow_parent,
                                grow_gamma: r.grow_gamma.clone(),
                                hyp_dispose: r.hyp_dispose.clone(),
                                eprime: r.eprime,
                                eprime_gamma: r.eprime_gamma.clone(),
                            })?;
                        }
                    }
                    break;
                }
            }
        }
        Ok(Some(e))
    }

    /// Confirms the trace is exhausted and the rebuilt state equals the
    /// source exactly.
    pub fn finish(self) -> Result<(), StateError> {
        if self.cursor != self.source.trace.len() {
            return Err(StateError::ReplayMismatch(
                "trace has steps after the final match".into(),
            ));
        }
        if self.rebuilt != *self.source {
            return Err(StateError::ReplayMismatch(
                "replayed state differs from the original".into(),
            ));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rational::rat;

    fn vid(i: u32) -> VertexId {
        VertexId(i)
    }

    #[test]
    fn two_phase_times() {
        let mut s = FracState::new();
        let e0 = s.begin_arrival(vid(0), vid(1), None).unwrap();
        s.match_isolated(rint(1)).unwrap();
        s.begin_arrival(vid(1), vid(2), None).unwrap();
        s.dispose_to(e0, rat(1, 3)).unwrap();
        s.match_growing(vid(1), rat(2, 3)).unwrap();
        let times: Vec<u64> = s.trace().iter().map(|st| st.time).collect();
        assert_eq!(times, vec![2, 3, 4]);
        assert_eq!(*s.x(e0), rat(1, 3));
        assert_eq!(s.load(vid(1)), rint(1));
        assert_eq!(*s.primal_value(), rint(1));
        s.verify_replay().unwrap();
    }

    #[test]
    fn arrival_discipline() {
        let mut s = FracState::new();
        s.begin_arrival(vid(0), vid(1), None).unwrap();
        assert!(matches!(
            s.begin_arrival(vid(2), vid(3), None),
            Err(StateError::UnfinishedArrival(_))
        ));
        s.match_isolated(rint(1)).unwrap();
        assert!(matches!(
            s.match_isolated(rint(1)),
            Err(StateError::NoOpenArrival)
        ));
        assert!(matches!(
            s.dispose_to(EdgeId(0), rint(0)),
            Err(StateError::NoOpenArrival)
        ));
    }

    #[test]
    fn dispose_records_delta_and_lambda() {
        let mut s = FracState::new();
        let e = s.begin_arrival(vid(0), vid(1), None).unwrap();
        s.match_isolated(rint(1)).unwrap();
        s.begin_arrival(vid(1), vid(2), None).unwrap();
        s.dispose_to(e, rat(1, 3)).unwrap();
        match &s.trace()[1].kind {
            StepKind::Dispose { delta, lambda, .. } => {
                assert_eq!(*delta, rat(2, 3));
                assert_eq!(*lambda, rint(1));
            }
            other => panic!("unexpected step {other:?}"),
        }
        // Raising by disposal is rejected; the state is unchanged.
        let err = s.dispose_to(e, rat(1, 2)).unwrap_err();
        assert!(matches!(err, StateError::IllegalIncrease { .. }));
        assert_eq!(*s.x(e), rat(1, 3));
        // A second lowering from 4/8 to 3/8 logs exact eighths.
        s.dispose_to(e, rat(1, 4)).unwrap();
        s.match_growing(vid(1), rat(1, 2)).unwrap();
        s.verify_replay().unwrap();
    }

    #[test]
    fn polytope_guard() {
        let mut s = FracState::new();
        let e = s.begin_arrival(vid(0), vid(1), None).unwrap();
        s.match_isolated(rat(1, 2)).unwrap();
        s.begin_arrival(vid(1), vid(2), None).unwrap();
        let err = s.match_growing(vid(1), rat(2, 3)).unwrap_err();
        assert!(matches!(err, StateError::PolytopeViolation { .. }));
        // The failed match leaves the arrival open and x untouched.
        assert_eq!(*s.x(EdgeId(1)), rint(0));
        s.match_growing(vid(1), rat(1, 2)).unwrap();
        assert_eq!(s.load(vid(1)), rint(1));
        assert_eq!(*s.x(e), rat(1, 2));
    }

    #[test]
    fn weighted_primal() {
        let mut s = FracState::new();
        s.begin_arrival(vid(0), vid(1), Some(rint(3))).unwrap();
        s.match_isolated(rat(1, 2)).unwrap();
        s.begin_arrival(vid(2), vid(3), Some(rint(2))).unwrap();
        s.match_isolated(rat(1, 2)).unwrap();
        assert_eq!(*s.primal_value(), rat(5, 2));
        assert_eq!(s.primal_value_recomputed(), rat(5, 2));
        assert_eq!(*FracState::new().primal_value(), rint(0));
    }

    #[test]
    fn merge_context_records_loads() {
        let mut s = FracState::new();
        for (u, v, x) in [
            (0u32, 1u32, rat(3, 8)),
            (2, 3, rat(3, 8)),
        ] {
            s.begin_arrival(vid(u), vid(v), None).unwrap();
            s.match_isolated(x).unwrap();
        }
        s.begin_arrival(vid(1), vid(2), None).unwrap();
        s.match_merge(rat(3, 8)).unwrap();
        match &s.trace()[2].kind {
            StepKind::Match { context, .. } => {
                assert_eq!(
                    *context,
                    MatchContext::Merge {
                        load_u: rat(3, 8),
                        load_v: rat(3, 8),
                    }
                );
            }
            other => panic!("unexpected step {other:?}"),
        }
        s.verify_replay().unwrap();
    }

    #[test]
    fn trivial_merge_is_atomic() {
        let mut s = FracState::new();
        // Isolated edge 0-1 at fraction 1; larger side 2-3, 3-4.
        let eprime = s.begin_arrival(vid(0), vid(1), None).unwrap();
        s.match_isolated(rint(1)).unwrap();
        s.begin_arrival(vid(2), vid(3), None).unwrap();
        s.match_isolated(rint(1)).unwrap();
        s.begin_arrival(vid(3), vid(4), None).unwrap();
        s.dispose_to(EdgeId(1), rat(1, 2)).unwrap();
        s.match_growing(vid(3), rat(1, 2)).unwrap();
        // Arrival 1-4 merges the isolated edge away: the replay matches
        // 1/2 to the new edge, lowers it to 3/8, and re-derives 5/8 for
        // the isolated edge.
        let e = s.begin_arrival(vid(1), vid(4), None).unwrap();
        s.match_trivial(TrivialReplaySpec {
            grow_parent: vid(4),
            grow_gamma: rat(1, 2),
            hyp_dispose: Some((rat(1, 8), rat(1, 2))),
            eprime,
            eprime_gamma: rat(5, 8),
        })
        .unwrap();
        assert_eq!(*s.x(e), rat(3, 8));
        assert_eq!(*s.x(eprime), rat(5, 8));
        assert_eq!(s.load(vid(1)), rint(1));
        assert_eq!(s.load(vid(4)), rat(7, 8));
        assert_eq!(s.trace().len(), 5);
        s.verify_replay().unwrap();
        let dump = s.format_trace();
        assert!(dump.contains("trivial-merge"));

        // A record that overfills the grow parent is rejected whole.
        let mut bad = s.clone();
        bad.begin_arrival(vid(0), vid(5), None).unwrap();
        let err = bad
            .match_trivial(TrivialReplaySpec {
                grow_parent: vid(0),
                grow_gamma: rint(1),
                hyp_dispose: None,
                eprime: e,
                eprime_gamma: rat(3, 8),
            })
            .unwrap_err();
        assert!(matches!(err, StateError::BadReplayRecord(_)));
        assert_eq!(*bad.x(e), rat(3, 8));
    }

    #[test]
    fn replay_detects_tampering() {
        let mut s = FracState::new();
        s.begin_arrival(vid(0), vid(1), None).unwrap();
        s.match_isolated(rint(1)).unwrap();
        s.begin_arrival(vid(1), vid(2), None).unwrap();
        s.dispose_to(EdgeId(0), rat(1, 3)).unwrap();
        s.match_growing(vid(1), rat(2, 3)).unwrap();
        s.verify_replay().unwrap();
        let mut tampered = s.clone();
        if let StepKind::Match { gamma, .. } = &mut tampered.trace[2].kind {
            *gamma = rat(1, 3);
        }
        assert!(tampered.verify_replay().is_err());
    }
}
