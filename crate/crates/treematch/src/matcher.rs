//! Common driving interface for the online algorithms, the artifact
//! bundle they produce for auditing and rounding, and the no-disposal
//! greedy baseline used as a negative control.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::fracstate::{FracState, StateError};
use crate::instance::{
    EdgeId, EdgeKind, InstanceError, InstanceStream, PrefixGraph, VertexId,
};
use crate::rational::{rint, Rational};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AlgoError {
    #[error("event {event}: {reason}")]
    ModelViolation { event: usize, reason: String },
    #[error("wrong dispatch: {0}")]
    WrongDispatch(String),
    #[error("invariant broken: {0}")]
    InvariantBroken(String),
    #[error(transparent)]
    State(#[from] StateError),
}

impl From<InstanceError> for AlgoError {
    fn from(e: InstanceError) -> Self {
        match e {
            InstanceError::ModelViolation { event, reason } => {
                AlgoError::ModelViolation { event, reason }
            }
            other => AlgoError::ModelViolation {
                event: 0,
                reason: other.to_string(),
            },
        }
    }
}

/// Dual variables after one event: per-vertex values plus dual mass
/// parked on edges (used by the forest algorithm's uncertain
/// assignments). Missing entries read as zero.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DualSnapshot {
    pub alpha: BTreeMap<VertexId, Rational>,
    pub uncertain: BTreeMap<EdgeId, Rational>,
}

impl DualSnapshot {
    pub fn alpha_of(&self, v: VertexId) -> Rational {
        self.alpha.get(&v).cloned().unwrap_or_else(|| rint(0))
    }

    pub fn uncertain_of(&self, e: EdgeId) -> Rational {
        self.uncertain.get(&e).cloned().unwrap_or_else(|| rint(0))
    }

    /// Total dual objective: vertex values plus edge-parked mass.
    pub fn dual_value(&self) -> Rational {
        let mut d = rint(0);
        for v in self.alpha.values() {
            d += v;
        }
        for v in self.uncertain.values() {
            d += v;
        }
        d
    }
}

/// Everything a completed run exposes: the final fractional state with
/// its trace, one dual snapshot per event, and each event's
/// classification.
#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub algo: &'static str,
    pub state: FracState,
    pub snapshots: Vec<DualSnapshot>,
    pub kinds: Vec<EdgeKind>,
}

/// An online matching algorithm consuming one edge arrival at a time.
/// Implementations classify arrivals themselves and keep their fractional
/// state and dual snapshots inspectable mid-run, which is what lets the
/// adaptive adversary observe fractions between arrivals.
pub trait OnlineMatcher {
    fn algo_id(&self) -> &'static str;

    /// Whether the algorithm expects weighted arrivals.
    fn wants_weights(&self) -> bool;

    fn process(
        &mut self,
        u: VertexId,
        v: VertexId,
        weight: Option<Rational>,
    ) -> Result<EdgeId, AlgoError>;

    fn state(&self) -> &FracState;

    fn snapshots(&self) -> &[DualSnapshot];

    fn kinds(&self) -> &[EdgeKind];

    fn into_artifacts(self) -> RunArtifacts
    where
        Self: Sized;

    /// Artifact bundle built by cloning, for matchers driven behind a
    /// trait object (the adaptive adversaries).
    fn artifacts_cloned(&self) -> RunArtifacts {
        RunArtifacts {
            algo: self.algo_id(),
            state: self.state().clone(),
            snapshots: self.snapshots().to_vec(),
            kinds: self.kinds().to_vec(),
        }
    }
}

/// Feeds a whole stream through a matcher, checking the weighted flag
/// against the algorithm's expectation up front.
pub fn run_stream<M: OnlineMatcher + ?Sized>(
    matcher: &mut M,
    stream: &InstanceStream,
) -> Result<(), AlgoError> {
    if stream.weighted != matcher.wants_weights() {
        let want = if matcher.wants_weights() {
            "weighted"
        } else {
            "unweighted"
        };
        return Err(AlgoError::WrongDispatch(format!(
            "{} expects {want} input",
            matcher.algo_id()
        )));
    }
    for ev in stream.events() {
        matcher.process(ev.u, ev.v, ev.weight.clone())?;
    }
    Ok(())
}

/// Integral greedy without disposal: matches an arriving edge fully iff
/// both endpoints are still unmatched. The classic 1/2-competitive
/// baseline the fractional algorithms are measured against.
pub struct GreedyMatcher {
    state: FracState,
    prefix: PrefixGraph,
    snapshots: Vec<DualSnapshot>,
    kinds: Vec<EdgeKind>,
}

impl Default for GreedyMatcher {
    fn default() -> Self {
        GreedyMatcher::new()
    }
}

impl GreedyMatcher {
    pub fn new() -> Self {
        GreedyMatcher {
            state: FracState::new(),
            prefix: PrefixGraph::new(),
            snapshots: Vec::new(),
            kinds: Vec::new(),
        }
    }
}

impl OnlineMatcher for GreedyMatcher {
    fn algo_id(&self) -> &'static str {
        "greedy"
    }

    fn wants_weights(&self) -> bool {
        false
    }

    fn process(
        &mut self,
        u: VertexId,
        v: VertexId,
        weight: Option<Rational>,
    ) -> Result<EdgeId, AlgoError> {
        let kind = self.prefix.classify(u, v)?;
        let e = self.state.begin_arrival(u, v, weight)?;
        let free = self.state.load(u) == rint(0) && self.state.load(v) == rint(0);
        let gamma = if free { rint(1) } else { rint(0) };
        match kind {
            EdgeKind::Isolated => self.state.match_isolated(gamma)?,
            EdgeKind::Growing { parent, .. } => self.state.match_growing(parent, gamma)?,
            EdgeKind::TrivialMerge { .. } | EdgeKind::NonTrivialMerge => {
                self.state.match_merge(gamma)?
            }
        }
        self.prefix.insert(u, v, e);
        self.kinds.push(kind);
        // Greedy certifies nothing; snapshots stay empty so audits are
        // skipped rather than failed.
        self.snapshots.push(DualSnapshot::default());
        Ok(e)
    }

    fn state(&self) -> &FracState {
        &self.state
    }

    fn snapshots(&self) -> &[DualSnapshot] {
        &self.snapshots
    }

    fn kinds(&self) -> &[EdgeKind] {
        &self.kinds
    }

    fn into_artifacts(self) -> RunArtifacts {
        RunArtifacts {
            algo: "greedy",
            state: self.state,
            snapshots: self.snapshots,
            kinds: self.kinds,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instance::{gen_hard_mcm_static, ArrivalModel};

    #[test]
    fn greedy_matches_when_both_free() {
        let s = gen_hard_mcm_static(2).unwrap();
        let mut g = GreedyMatcher::new();
        run_stream(&mut g, &s).unwrap();
        // Pendant of u1 wins, the spine edge loses, u2's pendant wins
        // again, and the second spine edge loses.
        let xs: Vec<Rational> = (0..4).map(|i| g.state().x(EdgeId(i)).clone()).collect();
        assert_eq!(xs, vec![rint(1), rint(0), rint(1), rint(0)]);
        assert_eq!(*g.state().primal_value(), rint(2));
    }

    #[test]
    fn weighted_flag_mismatch_is_rejected() {
        let mut s = InstanceStream::new(ArrivalModel::GrowingTree, true);
        s.add_edge("a", "b", Some(rint(2))).unwrap();
        let mut g = GreedyMatcher::new();
        assert!(matches!(
            run_stream(&mut g, &s),
            Err(AlgoError::WrongDispatch(_))
        ));
    }
}
