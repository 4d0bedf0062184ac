//! Edge-arrival instances: vertex/edge identifiers, arrival models, online
//! event classification, hard-instance and random-instance generators, and
//! the plain-text stream format.
//!
//! An instance is a sequence of edge arrivals over named vertices. Three
//! models are supported:
//!
//! * `growing-tree`: the graph is a single tree at all times; after the
//!   first edge, every arrival attaches a fresh leaf.
//! * `forest`: the graph is acyclic; arrivals may start new components,
//!   grow existing ones, or join two components.
//! * `general`: no structural constraint (used by baselines only).

use std::collections::HashMap;
use std::fmt;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::rational::{format_rational, parse_rational, rat, rint, Rational};

/// Dense vertex handle. The mapping to the original name lives in the
/// owning [`InstanceStream`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct VertexId(pub u32);

/// Dense edge handle equal to the edge's 0-based arrival slot. The 1-based
/// arrival index used in traces and reports is [`EdgeId::arrival_index`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct EdgeId(pub u32);

impl EdgeId {
    /// 1-based arrival position of this edge.
    pub fn arrival_index(self) -> usize {
        self.0 as usize + 1
    }
}

impl fmt::Display for VertexId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "v#{}", self.0)
    }
}

impl fmt::Display for EdgeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "e#{}", self.arrival_index())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArrivalModel {
    GrowingTree,
    Forest,
    General,
}

impl ArrivalModel {
    pub fn tag(self) -> &'static str {
        match self {
            ArrivalModel::GrowingTree => "growing-tree",
            ArrivalModel::Forest => "forest",
            ArrivalModel::General => "general",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Self> {
        match tag {
            "growing-tree" => Some(ArrivalModel::GrowingTree),
            "forest" => Some(ArrivalModel::Forest),
            "general" => Some(ArrivalModel::General),
            _ => None,
        }
    }
}

/// One edge arrival. The weight is present exactly when the stream is
/// weighted.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArrivalEvent {
    pub u: VertexId,
    pub v: VertexId,
    pub weight: Option<Rational>,
}

impl ArrivalEvent {
    /// Weight with the unweighted default of 1.
    pub fn weight_or_one(&self) -> Rational {
        self.weight.clone().unwrap_or_else(|| rint(1))
    }
}

/// How an arriving edge relates to the graph built from the prefix before
/// it. Classification happens *before* the edge is inserted.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EdgeKind {
    /// Both endpoints are new; the edge starts its own component.
    Isolated,
    /// Exactly one endpoint exists; the edge hangs a fresh leaf off it.
    Growing { parent: VertexId, child: VertexId },
    /// Joins two components, at least one of which is a single edge.
    /// `isolated_edge` is that single edge (when both sides qualify, the
    /// component of the event's first endpoint wins; see `classify`).
    TrivialMerge { isolated_edge: EdgeId },
    /// Joins two components that each already have at least two edges.
    NonTrivialMerge,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum InstanceError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("event {event}: {reason}")]
    ModelViolation { event: usize, reason: String },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

/// A complete edge-arrival instance with interned vertex names.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InstanceStream {
    pub model: ArrivalModel,
    pub weighted: bool,
    events: Vec<ArrivalEvent>,
    names: Vec<String>,
    by_name: HashMap<String, VertexId>,
    seen_pairs: HashMap<(VertexId, VertexId), EdgeId>,
}

impl InstanceStream {
    pub fn new(model: ArrivalModel, weighted: bool) -> Self {
        InstanceStream {
            model,
            weighted,
            events: Vec::new(),
            names: Vec::new(),
            by_name: HashMap::new(),
            seen_pairs: HashMap::new(),
        }
    }

    /// Interns a vertex name, allocating a fresh id on first sight.
    pub fn intern(&mut self, name: &str) -> VertexId {
        if let Some(&id) = self.by_name.get(name) {
            return id;
        }
        let id = VertexId(self.names.len() as u32);
        self.names.push(name.to_string());
        self.by_name.insert(name.to_string(), id);
        id
    }

    /// Appends an edge arrival given vertex names. Rejects self-loops,
    /// repeated endpoint pairs, and weights inconsistent with the header.
    pub fn add_edge(
        &mut self,
        u: &str,
        v: &str,
        weight: Option<Rational>,
    ) -> Result<EdgeId, InstanceError> {
        if u == v {
            return Err(InstanceError::InvalidParameter(format!(
                "self-loop on vertex `{u}`"
            )));
        }
        match (self.weighted, weight.is_some()) {
            (true, false) => {
                return Err(InstanceError::InvalidParameter(
                    "weighted stream requires a weight on every edge".into(),
                ))
            }
            (false, true) => {
                return Err(InstanceError::InvalidParameter(
                    "unweighted stream must not carry weights".into(),
                ))
            }
            _ => {}
        }
        if let Some(w) = &weight {
            if *w <= rint(0) {
                return Err(InstanceError::InvalidParameter(format!(
                    "weight must be strictly positive, got {}",
                    format_rational(w)
                )));
            }
        }
        let ui = self.intern(u);
        let vi = self.intern(v);
        let key = if ui <= vi { (ui, vi) } else { (vi, ui) };
        if self.seen_pairs.contains_key(&key) {
            return Err(InstanceError::InvalidParameter(format!(
                "duplicate edge {u}-{v}"
            )));
        }
        let id = EdgeId(self.events.len() as u32);
        self.seen_pairs.insert(key, id);
        self.events.push(ArrivalEvent {
            u: ui,
            v: vi,
            weight,
        });
        Ok(id)
    }

    pub fn events(&self) -> &[ArrivalEvent] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn vertex_count(&self) -> usize {
        self.names.len()
    }

    pub fn vertex_name(&self, v: VertexId) -> &str {
        &self.names[v.0 as usize]
    }

    /// Human-readable label `name-name` for an edge, for reports.
    pub fn edge_label(&self, e: EdgeId) -> String {
        let ev = &self.events[e.0 as usize];
        format!("{}-{}", self.vertex_name(ev.u), self.vertex_name(ev.v))
    }

    /// Edge weights in arrival order (1 for unweighted streams).
    pub fn weights(&self) -> Vec<Rational> {
        self.events.iter().map(|e| e.weight_or_one()).collect()
    }
}

/// Minimal union-find over dense vertex ids, with component edge counts so
/// single-edge components can be recognized in O(1).
#[derive(Debug, Clone, Default)]
pub struct UnionFind {
    parent: Vec<u32>,
    size: Vec<u32>,
}

impl UnionFind {
    pub fn new() -> Self {
        UnionFind::default()
    }

    pub fn ensure(&mut self, x: u32) {
        while self.parent.len() <= x as usize {
            self.parent.push(self.parent.len() as u32);
            self.size.push(1);
        }
    }

    pub fn find(&self, mut x: u32) -> u32 {
        while self.parent[x as usize] != x {
            x = self.parent[x as usize];
        }
        x
    }

    /// Unions the two sets, compressing both lookup paths; returns the new
    /// root. Callers must `ensure` both ids first.
    pub fn union(&mut self, a: u32, b: u32) -> u32 {
        let ra = self.find(a);
        let rb = self.find(b);
        if ra == rb {
            self.compress(a, ra);
            self.compress(b, rb);
            return ra;
        }
        let (big, small) = if self.size[ra as usize] >= self.size[rb as usize] {
            (ra, rb)
        } else {
            (rb, ra)
        };
        self.parent[small as usize] = big;
        self.size[big as usize] += self.size[small as usize];
        self.compress(a, big);
        self.compress(b, big);
        big
    }

    fn compress(&mut self, mut x: u32, root: u32) {
        while self.parent[x as usize] != root {
            let next = self.parent[x as usize];
            self.parent[x as usize] = root;
            x = next;
        }
    }
}

/// Incremental view of the graph formed by a stream prefix: adjacency,
/// degrees, and components. Supports online classification of the next
/// arrival before it is inserted.
#[derive(Debug, Clone, Default)]
pub struct PrefixGraph {
    adj: Vec<Vec<(VertexId, EdgeId)>>,
    uf: UnionFind,
    /// Per union-find root: number of edges in the component.
    comp_edges: HashMap<u32, u32>,
    /// Per union-find root: the component's only edge, when it has exactly one.
    comp_single: HashMap<u32, EdgeId>,
    n_edges: usize,
}

impl PrefixGraph {
    pub fn new() -> Self {
        PrefixGraph::default()
    }

    fn ensure_vertex(&mut self, v: VertexId) {
        while self.adj.len() <= v.0 as usize {
            self.adj.push(Vec::new());
        }
        self.uf.ensure(v.0);
    }

    pub fn degree(&self, v: VertexId) -> usize {
        self.adj
            .get(v.0 as usize)
            .map(|a| a.len())
            .unwrap_or(0)
    }

    pub fn neighbors(&self, v: VertexId) -> &[(VertexId, EdgeId)] {
        self.adj
            .get(v.0 as usize)
            .map(|a| a.as_slice())
            .unwrap_or(&[])
    }

    pub fn n_edges(&self) -> usize {
        self.n_edges
    }

    /// Number of vertex slots touched so far (dense ids 0..n).
    pub fn n_vertices(&self) -> usize {
        self.adj.len()
    }

    /// Union-find root of the vertex's component. Only meaningful for
    /// vertices with at least one incident edge.
    pub fn component_root(&self, v: VertexId) -> u32 {
        self.uf.find(v.0)
    }

    pub fn component_edge_count(&self, v: VertexId) -> u32 {
        let root = self.uf.find(v.0);
        *self.comp_edges.get(&root).unwrap_or(&0)
    }

    /// Classifies the next arrival against the current prefix. The edge is
    /// not inserted. When both candidate components are single edges, the
    /// component of `u` (the event's first endpoint) is reported as the
    /// isolated side, which keeps classification deterministic.
    pub fn classify(&self, u: VertexId, v: VertexId) -> Result<EdgeKind, InstanceError> {
        let du = self.degree(u);
        let dv = self.degree(v);
        match (du, dv) {
            (0, 0) => Ok(EdgeKind::Isolated),
            (_, 0) => Ok(EdgeKind::Growing {
                parent: u,
                child: v,
            }),
            (0, _) => Ok(EdgeKind::Growing {
                parent: v,
                child: u,
            }),
            _ => {
                let ru = self.uf.find(u.0);
                let rv = self.uf.find(v.0);
                if ru == rv {
                    return Err(InstanceError::ModelViolation {
                        event: self.n_edges + 1,
                        reason: format!("edge {u}-{v} would close a cycle"),
                    });
                }
                if let Some(&e) = self.comp_single.get(&ru) {
                    Ok(EdgeKind::TrivialMerge { isolated_edge: e })
                } else if let Some(&e) = self.comp_single.get(&rv) {
                    Ok(EdgeKind::TrivialMerge { isolated_edge: e })
                } else {
                    Ok(EdgeKind::NonTrivialMerge)
                }
            }
        }
    }

    /// Inserts the edge, updating adjacency and component bookkeeping.
    pub fn insert(&mut self, u: VertexId, v: VertexId, e: EdgeId) {
        self.ensure_vertex(u);
        self.ensure_vertex(v);
        self.adj[u.0 as usize].push((v, e));
        self.adj[v.0 as usize].push((u, e));
        let ru = self.uf.find(u.0);
        let rv = self.uf.find(v.0);
        let eu = self.comp_edges.remove(&ru).unwrap_or(0);
        let ev = if rv == ru {
            0
        } else {
            self.comp_edges.remove(&rv).unwrap_or(0)
        };
        self.comp_single.remove(&ru);
        self.comp_single.remove(&rv);
        let root = self.uf.union(u.0, v.0);
        let total = eu + ev + 1;
        self.comp_edges.insert(root, total);
        if total == 1 {
            self.comp_single.insert(root, e);
        }
        self.n_edges += 1;
    }
}

/// Classifies one event of a stream given the prefix graph of everything
/// before it.
pub fn classify_event(
    prefix: &PrefixGraph,
    event: &ArrivalEvent,
) -> Result<EdgeKind, InstanceError> {
    prefix.classify(event.u, event.v)
}

/// Checks the whole stream against its declared arrival model. Returns the
/// first offending event (1-based) and the reason.
pub fn validate_model(stream: &InstanceStream) -> Result<(), InstanceError> {
    if stream.model == ArrivalModel::General {
        return Ok(());
    }
    let mut prefix = PrefixGraph::new();
    for (i, ev) in stream.events().iter().enumerate() {
        let kind = prefix.classify(ev.u, ev.v).map_err(|_| {
            InstanceError::ModelViolation {
                event: i + 1,
                reason: format!(
                    "edge {}-{} closes a cycle",
                    stream.vertex_name(ev.u),
                    stream.vertex_name(ev.v)
                ),
            }
        })?;
        if stream.model == ArrivalModel::GrowingTree {
            let ok = match kind {
                EdgeKind::Isolated => i == 0,
                EdgeKind::Growing { .. } => i > 0,
                _ => false,
            };
            if !ok {
                let reason = match kind {
                    EdgeKind::Isolated => "starts a second component".to_string(),
                    _ => "joins two components".to_string(),
                };
                return Err(InstanceError::ModelViolation {
                    event: i + 1,
                    reason,
                });
            }
        }
        prefix.insert(ev.u, ev.v, EdgeId(i as u32));
    }
    Ok(())
}

/// The unweighted hard instance for maximum cardinality matching: a spine
/// `u1..u(n+1)` where each spine vertex `ui` first receives a pendant leaf
/// `vi` and then the next spine edge. The offline optimum is `n`.
pub fn gen_hard_mcm_static(n: usize) -> Result<InstanceStream, InstanceError> {
    if n == 0 {
        return Err(InstanceError::InvalidParameter(
            "hard mcm instance needs n >= 1".into(),
        ));
    }
    let mut s = InstanceStream::new(ArrivalModel::GrowingTree, false);
    for i in 1..=n {
        s.add_edge(&format!("u{i}"), &format!("v{i}"), None)?;
        s.add_edge(&format!("u{i}"), &format!("u{}", i + 1), None)?;
    }
    Ok(s)
}

/// Weight pattern for the two order-isomorphic weighted hard instances.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HardMwmVariant {
    /// Additive weights: pendant `1+(i-1)eps`, spine `1+i*eps`.
    Additive,
    /// Geometric weights: pendant `C^(i-1)`, spine `C^i`.
    Geometric,
}

/// The weighted hard instance on the same spine shape as the cardinality
/// one. `param` is the increment `eps` for the additive variant or the base
/// `C` for the geometric one.
pub fn gen_hard_mwm(
    n: usize,
    variant: HardMwmVariant,
    param: &Rational,
) -> Result<InstanceStream, InstanceError> {
    if n == 0 {
        return Err(InstanceError::InvalidParameter(
            "hard mwm instance needs n >= 1".into(),
        ));
    }
    match variant {
        HardMwmVariant::Additive => {
            if *param <= rint(0) {
                return Err(InstanceError::InvalidParameter(
                    "additive increment must be positive".into(),
                ));
            }
        }
        HardMwmVariant::Geometric => {
            if *param <= rint(1) {
                return Err(InstanceError::InvalidParameter(
                    "geometric base must exceed 1".into(),
                ));
            }
        }
    }
    let mut s = InstanceStream::new(ArrivalModel::GrowingTree, true);
    let weight = |i: usize, spine: bool| -> Rational {
        match variant {
            HardMwmVariant::Additive => {
                let k = if spine { i } else { i - 1 };
                rint(1) + param * rint(k as i64)
            }
            HardMwmVariant::Geometric => {
                let k = if spine { i } else { i - 1 };
                num_traits::pow::pow(param.clone(), k)
            }
        }
    };
    for i in 1..=n {
        s.add_edge(&format!("u{i}"), &format!("v{i}"), Some(weight(i, false)))?;
        s.add_edge(
            &format!("u{i}"),
            &format!("u{}", i + 1),
            Some(weight(i, true)),
        )?;
    }
    Ok(s)
}

/// Smallest integer base whose powers strictly dominate the sum of all
/// previously arrived weights in the geometric hard instance, times a
/// ten-fold safety margin. Domination is what makes the geometric variant
/// order-isomorphic to the additive one while spreading weights across
/// scales; any base >= 3 suffices for every n, so this is constant.
pub fn geometric_base_auto(n: usize) -> Rational {
    let minimal = if n <= 1 { 2 } else { 3 };
    rint(10 * minimal)
}

/// Random single growing tree: the first edge is isolated, every later edge
/// attaches a fresh leaf to a uniformly chosen existing vertex. Weights, if
/// requested, are small random rationals.
pub fn gen_random_growing_tree(
    n_edges: usize,
    weighted: bool,
    seed: u64,
) -> Result<InstanceStream, InstanceError> {
    if n_edges == 0 {
        return Err(InstanceError::InvalidParameter(
            "tree needs at least one edge".into(),
        ));
    }
    fn fresh(s: &mut InstanceStream, counter: &mut usize) -> String {
        let name = format!("t{counter}");
        *counter += 1;
        s.intern(&name);
        name
    }
    fn random_weight(rng: &mut ChaCha8Rng, weighted: bool) -> Option<Rational> {
        if weighted {
            Some(rat(rng.gen_range(1..=64), rng.gen_range(1..=8)))
        } else {
            None
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = InstanceStream::new(ArrivalModel::GrowingTree, weighted);
    let mut next_vertex = 0usize;
    let a = fresh(&mut s, &mut next_vertex);
    let b = fresh(&mut s, &mut next_vertex);
    let w = random_weight(&mut rng, weighted);
    s.add_edge(&a, &b, w)?;
    for _ in 1..n_edges {
        let parent = rng.gen_range(0..next_vertex);
        let child = fresh(&mut s, &mut next_vertex);
        let w = random_weight(&mut rng, weighted);
        let parent_name = s.vertex_name(VertexId(parent as u32)).to_string();
        s.add_edge(&parent_name, &child, w)?;
    }
    Ok(s)
}

/// Random forest stream. Each step merges two random components with
/// probability `merge_bias` (falling back to growth when fewer than two
/// components exist); otherwise it either starts a fresh isolated edge
/// (1 in 4) or grows a leaf off a uniform existing vertex.
pub fn gen_random_forest(
    n_edges: usize,
    merge_bias: &Rational,
    seed: u64,
) -> Result<InstanceStream, InstanceError> {
    if n_edges == 0 {
        return Err(InstanceError::InvalidParameter(
            "forest needs at least one edge".into(),
        ));
    }
    if !crate::rational::is_probability(merge_bias) {
        return Err(InstanceError::InvalidParameter(
            "merge_bias must lie in [0, 1]".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = InstanceStream::new(ArrivalModel::Forest, false);
    let mut uf = UnionFind::new();
    let mut n_vertices = 0u32;
    // Component roots are tracked lazily: we re-derive the root set on
    // demand. Streams stay small (hundreds of edges), so this is fine.
    let vertices_of_root = |uf: &UnionFind, n: u32| -> HashMap<u32, Vec<u32>> {
        let mut m: HashMap<u32, Vec<u32>> = HashMap::new();
        for v in 0..n {
            m.entry(uf.find(v)).or_default().push(v);
        }
        m
    };
    let fresh = |s: &mut InstanceStream, uf: &mut UnionFind, n: &mut u32| -> u32 {
        let id = *n;
        s.intern(&format!("f{id}"));
        uf.ensure(id);
        *n += 1;
        id
    };
    // Exact Bernoulli draw on the rational bias.
    let merge_coin = |rng: &mut ChaCha8Rng| -> bool {
        let num = merge_bias.numer();
        let den = merge_bias.denom();
        let d: u64 = den.try_into().expect("merge_bias denominator fits u64");
        let m: u64 = num.try_into().expect("merge_bias numerator fits u64");
        if d == 1 {
            return m == 1;
        }
        rng.gen_range(0..d) < m
    };
    for step in 0..n_edges {
        let comps = vertices_of_root(&uf, n_vertices);
        let want_merge = step > 0 && comps.len() >= 2 && merge_coin(&mut rng);
        if want_merge {
            let mut roots: Vec<u32> = comps.keys().copied().collect();
            roots.sort_unstable();
            let i = rng.gen_range(0..roots.len());
            let mut j = rng.gen_range(0..roots.len() - 1);
            if j >= i {
                j += 1;
            }
            let pick = |vs: &Vec<u32>, rng: &mut ChaCha8Rng| vs[rng.gen_range(0..vs.len())];
            let a = pick(&comps[&roots[i]], &mut rng);
            let b = pick(&comps[&roots[j]], &mut rng);
            let an = s.vertex_name(VertexId(a)).to_string();
            let bn = s.vertex_name(VertexId(b)).to_string();
            s.add_edge(&an, &bn, None)?;
            uf.union(a, b);
        } else {
            let isolated = step == 0 || rng.gen_range(0..4u8) == 0;
            if isolated {
                let a = fresh(&mut s, &mut uf, &mut n_vertices);
                let b = fresh(&mut s, &mut uf, &mut n_vertices);
                let an = s.vertex_name(VertexId(a)).to_string();
                let bn = s.vertex_name(VertexId(b)).to_string();
                s.add_edge(&an, &bn, None)?;
                uf.union(a, b);
            } else {
                let parent = rng.gen_range(0..n_vertices);
                let child = fresh(&mut s, &mut uf, &mut n_vertices);
                let pn = s.vertex_name(VertexId(parent)).to_string();
                let cn = s.vertex_name(VertexId(child)).to_string();
                s.add_edge(&pn, &cn, None)?;
                uf.union(parent, child);
            }
        }
    }
    Ok(s)
}

/// Parses the plain-text stream format:
///
/// ```text
/// # comment
/// model growing-tree|forest|general [weighted]
/// e <u> <v> [<weight>]
/// ```
///
/// Vertex names are arbitrary whitespace-free tokens; weights are rationals
/// `p/q` in canonical form. Parsing is bit-exact: serializing the result
/// reproduces an equivalent stream.
pub fn parse_stream(text: &str) -> Result<InstanceStream, InstanceError> {
    let mut stream: Option<InstanceStream> = None;
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = match raw.find('#') {
            Some(pos) => &raw[..pos],
            None => raw,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        let mut tokens = line.split_whitespace();
        let head = tokens.next().unwrap();
        match head {
            "model" => {
                if stream.is_some() {
                    return Err(InstanceError::Parse {
                        line: line_no,
                        msg: "duplicate model line".into(),
                    });
                }
                let tag = tokens.next().ok_or(InstanceError::Parse {
                    line: line_no,
                    msg: "missing model tag".into(),
                })?;
                let model = ArrivalModel::from_tag(tag).ok_or_else(|| InstanceError::Parse {
                    line: line_no,
                    msg: format!("unknown model `{tag}`"),
                })?;
                let weighted = match tokens.next() {
                    None => false,
                    Some("weighted") => true,
                    Some(other) => {
                        return Err(InstanceError::Parse {
                            line: line_no,
                            msg: format!("unexpected token `{other}` after model"),
                        })
                    }
                };
                if tokens.next().is_some() {
                    return Err(InstanceError::Parse {
                        line: line_no,
                        msg: "trailing tokens after model line".into(),
                    });
                }
                stream = Some(InstanceStream::new(model, weighted));
            }
            "e" => {
                let stream = stream.as_mut().ok_or(InstanceError::Parse {
                    line: line_no,
                    msg: "edge before model line".into(),
                })?;
                let u = tokens.next().ok_or(InstanceError::Parse {
                    line: line_no,
                    msg: "edge needs two endpoints".into(),
                })?;
                let v = tokens.next().ok_or(InstanceError::Parse {
                    line: line_no,
                    msg: "edge needs two endpoints".into(),
                })?;
                let weight = match tokens.next() {
                    Some(w) => Some(parse_rational(w).map_err(|msg| InstanceError::Parse {
                        line: line_no,
                        msg,
                    })?),
                    None => None,
                };
                if tokens.next().is_some() {
                    return Err(InstanceError::Parse {
                        line: line_no,
                        msg: "trailing tokens after edge".into(),
                    });
                }
                stream
                    .add_edge(u, v, weight)
                    .map_err(|e| InstanceError::Parse {
                        line: line_no,
                        msg: e.to_string(),
                    })?;
            }
            other => {
                return Err(InstanceError::Parse {
                    line: line_no,
                    msg: format!("unknown directive `{other}`"),
                })
            }
        }
    }
    stream.ok_or(InstanceError::Parse {
        line: 0,
        msg: "empty input: missing model line".into(),
    })
}

/// Serializes a stream in the canonical text form read by [`parse_stream`].
pub fn serialize_stream(stream: &InstanceStream) -> String {
    let mut out = String::new();
    out.push_str("model ");
    out.push_str(stream.model.tag());
    if stream.weighted {
        out.push_str(" weighted");
    }
    out.push('\n');
    for ev in stream.events() {
        out.push_str("e ");
        out.push_str(stream.vertex_name(ev.u));
        out.push(' ');
        out.push_str(stream.vertex_name(ev.v));
        if let Some(w) = &ev.weight {
            out.push(' ');
            out.push_str(&format_rational(w));
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stream_of(edges: &[(&str, &str)]) -> (InstanceStream, PrefixGraph) {
        let mut s = InstanceStream::new(ArrivalModel::Forest, false);
        let mut g = PrefixGraph::new();
        for (i, (u, v)) in edges.iter().enumerate() {
            let e = s.add_edge(u, v, None).unwrap();
            assert_eq!(e, EdgeId(i as u32));
            let ev = s.events()[i].clone();
            g.insert(ev.u, ev.v, e);
        }
        (s, g)
    }

    #[test]
    fn classification_cases() {
        let (mut s, g) = stream_of(&[]);
        // Empty graph: everything is isolated.
        let a = s.intern("a");
        let b = s.intern("b");
        assert_eq!(g.classify(a, b).unwrap(), EdgeKind::Isolated);

        let (mut s, g) = stream_of(&[("a", "b")]);
        let a = s.intern("a");
        let c = s.intern("c");
        assert_eq!(
            g.classify(a, c).unwrap(),
            EdgeKind::Growing {
                parent: a,
                child: c
            }
        );

        // a-b, c-d, d-e: edge (b,d) joins a single-edge component to a
        // two-edge one.
        let (mut s, g) = stream_of(&[("a", "b"), ("c", "d"), ("d", "e")]);
        let b = s.intern("b");
        let d = s.intern("d");
        assert_eq!(
            g.classify(b, d).unwrap(),
            EdgeKind::TrivialMerge {
                isolated_edge: EdgeId(0)
            }
        );

        // Two two-edge components: non-trivial merge.
        let (mut s, g) = stream_of(&[("a", "b"), ("b", "c"), ("d", "e"), ("e", "f")]);
        let a = s.intern("a");
        let f = s.intern("f");
        assert_eq!(g.classify(a, f).unwrap(), EdgeKind::NonTrivialMerge);

        // Cycle within one component is a model violation.
        let (mut s, g) = stream_of(&[("a", "b"), ("b", "c")]);
        let a = s.intern("a");
        let c = s.intern("c");
        assert!(g.classify(a, c).is_err());
    }

    #[test]
    fn trivial_merge_prefers_first_endpoint_side() {
        // Both components are single edges; the event's first endpoint
        // decides which one is reported.
        let (mut s, g) = stream_of(&[("a", "b"), ("c", "d")]);
        let b = s.intern("b");
        let c = s.intern("c");
        assert_eq!(
            g.classify(b, c).unwrap(),
            EdgeKind::TrivialMerge {
                isolated_edge: EdgeId(0)
            }
        );
        assert_eq!(
            g.classify(c, b).unwrap(),
            EdgeKind::TrivialMerge {
                isolated_edge: EdgeId(1)
            }
        );
    }

    #[test]
    fn validate_growing_tree() {
        let mut s = InstanceStream::new(ArrivalModel::GrowingTree, false);
        s.add_edge("a", "b", None).unwrap();
        s.add_edge("b", "c", None).unwrap();
        s.add_edge("a", "d", None).unwrap();
        assert!(validate_model(&s).is_ok());

        let mut s = InstanceStream::new(ArrivalModel::GrowingTree, false);
        s.add_edge("a", "b", None).unwrap();
        s.add_edge("c", "d", None).unwrap();
        let err = validate_model(&s).unwrap_err();
        match err {
            InstanceError::ModelViolation { event, .. } => assert_eq!(event, 2),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn validate_forest_rejects_cycles() {
        let mut s = InstanceStream::new(ArrivalModel::Forest, false);
        s.add_edge("a", "b", None).unwrap();
        s.add_edge("b", "c", None).unwrap();
        s.add_edge("c", "a", None).unwrap();
        let err = validate_model(&s).unwrap_err();
        match err {
            InstanceError::ModelViolation { event, .. } => assert_eq!(event, 3),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn stream_rejects_bad_edges() {
        let mut s = InstanceStream::new(ArrivalModel::Forest, false);
        assert!(s.add_edge("a", "a", None).is_err());
        s.add_edge("a", "b", None).unwrap();
        assert!(s.add_edge("b", "a", None).is_err());
        assert!(s.add_edge("a", "c", Some(rint(1))).is_err());
        let mut w = InstanceStream::new(ArrivalModel::Forest, true);
        assert!(w.add_edge("a", "b", None).is_err());
        assert!(w.add_edge("a", "b", Some(rint(0))).is_err());
        assert!(w.add_edge("a", "b", Some(rat(-1, 2))).is_err());
        assert!(w.add_edge("a", "b", Some(rat(3, 2))).is_ok());
    }

    #[test]
    fn hard_mcm_shape() {
        let s = gen_hard_mcm_static(3).unwrap();
        assert_eq!(s.len(), 6);
        assert_eq!(s.vertex_count(), 7);
        assert!(validate_model(&s).is_ok());
        let labels: Vec<String> = (0..6).map(|i| s.edge_label(EdgeId(i))).collect();
        assert_eq!(
            labels,
            vec!["u1-v1", "u1-u2", "u2-v2", "u2-u3", "u3-v3", "u3-u4"]
        );
        assert!(gen_hard_mcm_static(0).is_err());
    }

    #[test]
    fn hard_mwm_weights() {
        let eps = rat(1, 1000);
        let s = gen_hard_mwm(3, HardMwmVariant::Additive, &eps).unwrap();
        let w: Vec<Rational> = s.events().iter().map(|e| e.weight.clone().unwrap()).collect();
        let expect = vec![
            rint(1),
            rint(1) + &eps,
            rint(1) + &eps,
            rint(1) + rat(2, 1000),
            rint(1) + rat(2, 1000),
            rint(1) + rat(3, 1000),
        ];
        assert_eq!(w, expect);

        let c = rint(3);
        let s = gen_hard_mwm(3, HardMwmVariant::Geometric, &c).unwrap();
        let w: Vec<Rational> = s.events().iter().map(|e| e.weight.clone().unwrap()).collect();
        assert_eq!(
            w,
            vec![rint(1), rint(3), rint(3), rint(9), rint(9), rint(27)]
        );
        assert!(gen_hard_mwm(2, HardMwmVariant::Geometric, &rint(1)).is_err());

        // Geometric spine weights dominate everything arrived before them.
        let c = geometric_base_auto(10);
        let s = gen_hard_mwm(10, HardMwmVariant::Geometric, &c).unwrap();
        let mut sum = rint(0);
        for (i, ev) in s.events().iter().enumerate() {
            let w = ev.weight.clone().unwrap();
            if i % 2 == 1 {
                assert!(w > sum, "spine weight at event {} fails domination", i + 1);
            }
            sum += w;
        }
    }

    #[test]
    fn generators_produce_valid_streams() {
        let t = gen_random_growing_tree(40, false, 7).unwrap();
        assert_eq!(t.len(), 40);
        assert!(validate_model(&t).is_ok());

        let f = gen_random_forest(60, &rat(1, 2), 7).unwrap();
        assert_eq!(f.len(), 60);
        assert!(validate_model(&f).is_ok());

        // Determinism: same seed, same stream.
        let f2 = gen_random_forest(60, &rat(1, 2), 7).unwrap();
        assert_eq!(serialize_stream(&f), serialize_stream(&f2));
        let f3 = gen_random_forest(60, &rat(1, 2), 8).unwrap();
        assert_ne!(serialize_stream(&f), serialize_stream(&f3));
    }

    #[test]
    fn forest_generator_reaches_nontrivial_merges() {
        let f = gen_random_forest(120, &rat(1, 2), 11).unwrap();
        let mut g = PrefixGraph::new();
        let mut kinds = Vec::new();
        for (i, ev) in f.events().iter().enumerate() {
            kinds.push(g.classify(ev.u, ev.v).unwrap());
            g.insert(ev.u, ev.v, EdgeId(i as u32));
        }
        assert!(kinds
            .iter()
            .any(|k| matches!(k, EdgeKind::NonTrivialMerge)));
        assert!(kinds
            .iter()
            .any(|k| matches!(k, EdgeKind::TrivialMerge { .. })));
    }

    #[test]
    fn parse_serialize_round_trip() {
        let text = "# demo\nmodel forest weighted\ne a b 3/2\ne b c 2\ne d e 7/3 # inline comment\n";
        let s = parse_stream(text).unwrap();
        assert_eq!(s.model, ArrivalModel::Forest);
        assert!(s.weighted);
        assert_eq!(s.len(), 3);
        let out = serialize_stream(&s);
        assert_eq!(out, "model forest weighted\ne a b 3/2\ne b c 2\ne d e 7/3\n");
        let s2 = parse_stream(&out).unwrap();
        assert_eq!(s, s2);
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let cases: &[(&str, usize)] = &[
            ("model bogus\n", 1),
            ("e a b\n", 1),
            ("model forest\ne a\n", 2),
            ("model forest\ne a a\n", 2),
            ("model forest\ne a b\ne a b\n", 3),
            ("model forest\ne a b 1/0\n", 2),
            ("model forest\ne a b 2\n", 2),
            ("model forest weighted\ne a b\n", 2),
            ("model forest\nmodel forest\n", 2),
            ("model forest extra\n", 1),
        ];
        for (text, line) in cases {
            match parse_stream(text) {
                Err(InstanceError::Parse { line: l, .. }) => {
                    assert_eq!(l, *line, "wrong line for {text:?}")
                }
                other => panic!("expected parse error for {text:?}, got {other:?}"),
            }
        }
    }
}
