//! Complete and aggregated contact graphs.
//!
//! A contact graph has `k` nodes; each node aggregates one or more simulated
//! entities (links, objects, scenery). Edges are the `k(k-1)/2` unordered node
//! pairs, stored as a flat binary vector in row-major upper-triangular order:
//! `(0,1), (0,2), .., (0,k-1), (1,2), ..`.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ContactError {
    #[error("invalid node pair ({i}, {j}) for a graph with {k} nodes")]
    InvalidPair { i: usize, j: usize, k: usize },
    #[error("unknown entity `{0}` in contact evidence")]
    UnknownEntity(String),
    #[error("edge vectors differ in length: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("invalid aggregation map: {0}")]
    InvalidMap(String),
    #[error("missing net force for entity `{0}`")]
    MissingForce(String),
    #[error("invalid force rule: {0}")]
    InvalidRule(String),
}

/// Number of edges of the complete graph on `k` nodes.
pub fn edge_count(k: usize) -> usize {
    k * k.saturating_sub(1) / 2
}

/// Flat index of the edge between nodes `i < j`.
pub fn edge_index(i: usize, j: usize, k: usize) -> Result<usize, ContactError> {
    if i >= j || j >= k {
        return Err(ContactError::InvalidPair { i, j, k });
    }
    // rows 0..i contribute (k-1) + (k-2) + .. + (k-i) edges
    Ok(i * (2 * k - i - 1) / 2 + (j - i - 1))
}

/// Inverse of [`edge_index`].
pub fn edge_nodes(index: usize, k: usize) -> Option<(usize, usize)> {
    let mut base = 0;
    for i in 0..k.saturating_sub(1) {
        let row = k - i - 1;
        if index < base + row {
            return Some((i, i + 1 + index - base));
        }
        base += row;
    }
    None
}

/// Assignment of simulated entities to contact-graph nodes.
///
/// Entities mapped to `None` are known but excluded (the ground plane, for
/// instance); contacts involving them never set an edge.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregationMap {
    pub nodes: Vec<String>,
    pub assignment: BTreeMap<String, Option<usize>>,
}

impl AggregationMap {
    pub fn new(
        nodes: Vec<String>,
        assignment: BTreeMap<String, Option<usize>>,
    ) -> Result<Self, ContactError> {
        let map = Self { nodes, assignment };
        map.validate()?;
        Ok(map)
    }

    pub fn validate(&self) -> Result<(), ContactError> {
        let k = self.nodes.len();
        if k < 2 {
            return Err(ContactError::InvalidMap(format!("need at least 2 nodes, got {k}")));
        }
        let unique: BTreeSet<_> = self.nodes.iter().collect();
        if unique.len() != k {
            return Err(ContactError::InvalidMap("duplicate node names".into()));
        }
        let mut used = vec![false; k];
        for (name, node) in &self.assignment {
            if let Some(n) = *node {
                if n >= k {
                    return Err(ContactError::InvalidMap(format!(
                        "entity `{name}` mapped to node {n}, but only {k} nodes exist"
                    )));
                }
                used[n] = true;
            }
        }
        if let Some(empty) = used.iter().position(|u| !u) {
            return Err(ContactError::InvalidMap(format!(
                "node `{}` has no entities",
                self.nodes[empty]
            )));
        }
        Ok(())
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        edge_count(self.nodes.len())
    }

    /// Node of `entity`: `Ok(None)` when excluded, error when unknown.
    pub fn node_of(&self, entity: &str) -> Result<Option<usize>, ContactError> {
        self.assignment
            .get(entity)
            .copied()
            .ok_or_else(|| ContactError::UnknownEntity(entity.to_string()))
    }

    pub fn node_index(&self, name: &str) -> Option<usize> {
        self.nodes.iter().position(|n| n == name)
    }

    /// Three-node map in the ball-play style: `hands`, `ball`, `rest_body`.
    /// Edge 0 is hands–ball, edge 1 hands–rest body, edge 2 ball–rest body.
    pub fn ball_play(hands: &[&str], ball: &[&str], rest: &[&str], excluded: &[&str]) -> Self {
        Self::three_node(["hands", "ball", "rest_body"], [hands, ball, rest], excluded)
    }

    /// Three-node map in the tabletop-grasp style: `body`, `object`, `table`.
    /// Edge 0 is body–object, edge 1 body–table, edge 2 object–table.
    pub fn grasp(body: &[&str], object: &[&str], table: &[&str], excluded: &[&str]) -> Self {
        Self::three_node(["body", "object", "table"], [body, object, table], excluded)
    }

    fn three_node(names: [&str; 3], groups: [&[&str]; 3], excluded: &[&str]) -> Self {
        let mut assignment = BTreeMap::new();
        for (node, group) in groups.iter().enumerate() {
            for e in group.iter() {
                assignment.insert(e.to_string(), Some(node));
            }
        }
        for e in excluded {
            assignment.insert(e.to_string(), None);
        }
        Self {
            nodes: names.iter().map(|s| s.to_string()).collect(),
            assignment,
        }
    }
}

/// Binary edge labels of one frame.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ContactGraphState {
    pub edges: Vec<u8>,
}

impl ContactGraphState {
    pub fn empty(edge_count: usize) -> Self {
        Self { edges: vec![0; edge_count] }
    }

    pub fn from_edges(edges: Vec<u8>) -> Self {
        Self { edges }
    }

    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    pub fn as_f64(&self) -> Vec<f64> {
        self.edges.iter().map(|&e| e as f64).collect()
    }

    /// Space-separated edge values, e.g. `"1 0 0"`.
    pub fn to_line(&self) -> String {
        self.edges.iter().map(|e| e.to_string()).collect::<Vec<_>>().join(" ")
    }
}

/// A touching pair of entities with the contact force exerted on `a` by `b`
/// (summed over the control step, in newtons).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairContact {
    pub a: String,
    pub b: String,
    pub force_on_a: Vec<f64>,
}

/// Contact evidence read out of a simulator after one control step.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ContactEvidence {
    pub pairs: Vec<PairContact>,
    /// Per-entity net contact force.
    pub net_forces: BTreeMap<String, Vec<f64>>,
}

impl ContactEvidence {
    pub fn from_pairs<I, S>(pairs: I) -> Self
    where
        I: IntoIterator<Item = (S, S)>,
        S: Into<String>,
    {
        Self {
            pairs: pairs
                .into_iter()
                .map(|(a, b)| PairContact { a: a.into(), b: b.into(), force_on_a: Vec::new() })
                .collect(),
            net_forces: BTreeMap::new(),
        }
    }
}

/// Geometric contact graph: an edge is set iff some cross-node entity pair touches.
pub fn extract_cg(
    evidence: &ContactEvidence,
    map: &AggregationMap,
) -> Result<ContactGraphState, ContactError> {
    let k = map.node_count();
    let mut state = ContactGraphState::empty(edge_count(k));
    for pair in &evidence.pairs {
        let (na, nb) = (map.node_of(&pair.a)?, map.node_of(&pair.b)?);
        let (Some(na), Some(nb)) = (na, nb) else { continue };
        if na == nb {
            continue;
        }
        let idx = edge_index(na.min(nb), na.max(nb), k)?;
        state.edges[idx] = 1;
    }
    Ok(state)
}

/// One edge of the force-threshold contact approximation.
///
/// The edge is set when the summed net force of `active` exceeds
/// `active_threshold` on any of `axes`, and the summed net force of `quiet`
/// stays below `quiet_threshold` on all of them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForceEdgeRule {
    pub node_a: usize,
    pub node_b: usize,
    pub active: Vec<String>,
    pub active_threshold: f64,
    pub quiet: Vec<String>,
    pub quiet_threshold: f64,
    #[serde(default = "default_axes")]
    pub axes: Vec<usize>,
}

fn default_axes() -> Vec<usize> {
    vec![0, 1]
}

pub const DEFAULT_FORCE_THRESHOLD: f64 = 1.0;

impl ForceEdgeRule {
    /// Object-in-hand rule: the object feels a contact force while the non-hand
    /// body parts feel none.
    pub fn held_object(
        hands_node: usize,
        object_node: usize,
        object: &[&str],
        rest_body: &[&str],
    ) -> Self {
        Self {
            node_a: hands_node,
            node_b: object_node,
            active: object.iter().map(|s| s.to_string()).collect(),
            active_threshold: DEFAULT_FORCE_THRESHOLD,
            quiet: rest_body.iter().map(|s| s.to_string()).collect(),
            quiet_threshold: DEFAULT_FORCE_THRESHOLD,
            axes: default_axes(),
        }
    }
}

fn group_force(
    names: &[String],
    forces: &BTreeMap<String, Vec<f64>>,
) -> Result<Vec<f64>, ContactError> {
    let mut sum: Vec<f64> = Vec::new();
    for n in names {
        let f = forces.get(n).ok_or_else(|| ContactError::MissingForce(n.clone()))?;
        if sum.is_empty() {
            sum = vec![0.0; f.len()];
        }
        for (s, v) in sum.iter_mut().zip(f) {
            *s += v;
        }
    }
    Ok(sum)
}

fn max_abs_on_axes(f: &[f64], axes: &[usize]) -> f64 {
    axes.iter().filter_map(|&a| f.get(a)).fold(0.0, |m: f64, v| m.max(v.abs()))
}

/// Force-threshold contact graph: edges without a rule stay 0.
pub fn extract_cg_from_forces(
    net_forces: &BTreeMap<String, Vec<f64>>,
    rules: &[ForceEdgeRule],
    map: &AggregationMap,
) -> Result<ContactGraphState, ContactError> {
    let k = map.node_count();
    let mut state = ContactGraphState::empty(edge_count(k));
    for rule in rules {
        if rule.active_threshold <= 0.0 || rule.quiet_threshold <= 0.0 {
            return Err(ContactError::InvalidRule("thresholds must be positive".into()));
        }
        let (i, j) = (rule.node_a.min(rule.node_b), rule.node_a.max(rule.node_b));
        let idx = edge_index(i, j, k)?;
        let active = group_force(&rule.active, net_forces)?;
        let quiet = group_force(&rule.quiet, net_forces)?;
        let fires = max_abs_on_axes(&active, &rule.axes) > rule.active_threshold
            && max_abs_on_axes(&quiet, &rule.axes) < rule.quiet_threshold;
        if fires {
            state.edges[idx] = 1;
        }
    }
    Ok(state)
}

/// Elementwise `|sim - ref|` of two edge vectors.
pub fn cg_error(
    sim: &ContactGraphState,
    reference: &ContactGraphState,
) -> Result<Vec<u8>, ContactError> {
    if sim.len() != reference.len() {
        return Err(ContactError::LengthMismatch(sim.len(), reference.len()));
    }
    Ok(sim
        .edges
        .iter()
        .zip(&reference.edges)
        .map(|(&a, &b)| (a as i16 - b as i16).unsigned_abs() as u8)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ball_map() -> AggregationMap {
        AggregationMap::ball_play(
            &["hand_l", "hand_r", "finger"],
            &["ball"],
            &["torso", "arm_l", "arm_r"],
            &["ground"],
        )
    }

    #[test]
    fn edge_index_examples() {
        assert_eq!(edge_index(0, 1, 3).unwrap(), 0);
        assert_eq!(edge_index(0, 2, 3).unwrap(), 1);
        assert_eq!(edge_index(1, 2, 3).unwrap(), 2);
        assert!(edge_index(1, 1, 3).is_err());
        assert!(edge_index(2, 1, 3).is_err());
        assert!(edge_index(0, 3, 3).is_err());
    }

    #[test]
    fn edge_index_enumerates_bijectively() {
        for k in 2..9 {
            let mut seen = BTreeSet::new();
            let mut expected = 0;
            for i in 0..k {
                for j in i + 1..k {
                    let idx = edge_index(i, j, k).unwrap();
                    assert_eq!(idx, expected, "canonical order broken at ({i},{j}) k={k}");
                    assert_eq!(edge_nodes(idx, k), Some((i, j)));
                    seen.insert(idx);
                    expected += 1;
                }
            }
            assert_eq!(seen.len(), edge_count(k));
        }
        assert_eq!(edge_count(6), 15);
    }

    #[test]
    fn empty_evidence_gives_zero_graph() {
        let cg = extract_cg(&ContactEvidence::default(), &ball_map()).unwrap();
        assert_eq!(cg.edges, vec![0, 0, 0]);
    }

    #[test]
    fn fingertip_on_ball_sets_single_edge() {
        let ev = ContactEvidence::from_pairs([("finger", "ball")]);
        let cg = extract_cg(&ev, &ball_map()).unwrap();
        assert_eq!(cg.edges, vec![1, 0, 0]);
    }

    #[test]
    fn intra_node_and_excluded_contacts_ignored() {
        let ev = ContactEvidence::from_pairs([("hand_l", "finger"), ("ball", "ground"), ("torso", "ground")]);
        let cg = extract_cg(&ev, &ball_map()).unwrap();
        assert_eq!(cg.edges, vec![0, 0, 0]);
    }

    #[test]
    fn unknown_entity_rejected() {
        let ev = ContactEvidence::from_pairs([("tail", "ball")]);
        assert_eq!(
            extract_cg(&ev, &ball_map()),
            Err(ContactError::UnknownEntity("tail".into()))
        );
    }

    #[test]
    fn three_node_maps_have_three_edges() {
        assert_eq!(ball_map().edge_count(), 3);
        let grab = AggregationMap::grasp(&["body"], &["mug"], &["table"], &[]);
        assert_eq!(grab.edge_count(), 3);
        grab.validate().unwrap();
    }

    #[test]
    fn map_validation() {
        let mut m = ball_map();
        m.assignment.insert("x".into(), Some(7));
        assert!(m.validate().is_err());
        let lonely = AggregationMap::new(vec!["a".into()], BTreeMap::new());
        assert!(lonely.is_err());
    }

    fn forces(ball: [f64; 2], rest: [f64; 2]) -> BTreeMap<String, Vec<f64>> {
        let mut f = BTreeMap::new();
        f.insert("ball".to_string(), ball.to_vec());
        f.insert("torso".to_string(), rest.to_vec());
        f
    }

    fn rule() -> ForceEdgeRule {
        ForceEdgeRule::held_object(0, 1, &["ball"], &["torso"])
    }

    #[test]
    fn force_rule_predicates() {
        let map = ball_map();
        let zero = extract_cg_from_forces(&forces([0.0, 0.0], [0.0, 0.0]), &[rule()], &map).unwrap();
        assert_eq!(zero.edges, vec![0, 0, 0]);
        let held = extract_cg_from_forces(&forces([5.0, 0.0], [0.0, 0.0]), &[rule()], &map).unwrap();
        assert_eq!(held.edges, vec![1, 0, 0]);
        let both = extract_cg_from_forces(&forces([5.0, 0.0], [3.0, 0.0]), &[rule()], &map).unwrap();
        assert_eq!(both.edges, vec![0, 0, 0]);
        let missing = extract_cg_from_forces(&BTreeMap::new(), &[rule()], &map);
        assert_eq!(missing, Err(ContactError::MissingForce("ball".into())));
    }

    #[test]
    fn cg_error_examples() {
        let a = ContactGraphState::from_edges(vec![1, 0, 0]);
        assert_eq!(cg_error(&a, &a).unwrap(), vec![0, 0, 0]);
        let b = ContactGraphState::from_edges(vec![1, 0, 1]);
        let c = ContactGraphState::from_edges(vec![0, 0, 1]);
        assert_eq!(cg_error(&b, &c).unwrap(), vec![1, 0, 0]);
        assert!(cg_error(&a, &ContactGraphState::empty(2)).is_err());
    }

    const ENTITIES: [&str; 8] = ["hand_l", "hand_r", "finger", "ball", "torso", "arm_l", "arm_r", "ground"];

    fn pair_strategy() -> impl Strategy<Value = Vec<(usize, usize)>> {
        prop::collection::vec((0..ENTITIES.len(), 0..ENTITIES.len()), 0..12)
    }

    proptest! {
        #[test]
        fn pair_order_symmetry(pairs in pair_strategy()) {
            let map = ball_map();
            let fwd = ContactEvidence::from_pairs(pairs.iter().map(|&(a, b)| (ENTITIES[a], ENTITIES[b])));
            let rev = ContactEvidence::from_pairs(pairs.iter().map(|&(a, b)| (ENTITIES[b], ENTITIES[a])));
            prop_assert_eq!(extract_cg(&fwd, &map).unwrap(), extract_cg(&rev, &map).unwrap());
        }

        #[test]
        fn adding_a_pair_never_clears_an_edge(pairs in pair_strategy(), extra in (0..ENTITIES.len(), 0..ENTITIES.len())) {
            let map = ball_map();
            let base = ContactEvidence::from_pairs(pairs.iter().map(|&(a, b)| (ENTITIES[a], ENTITIES[b])));
            let mut more = base.clone();
            more.pairs.push(PairContact { a: ENTITIES[extra.0].into(), b: ENTITIES[extra.1].into(), force_on_a: vec![] });
            let g0 = extract_cg(&base, &map).unwrap();
            let g1 = extract_cg(&more, &map).unwrap();
            for (x, y) in g0.edges.iter().zip(&g1.edges) {
                prop_assert!(y >= x);
            }
        }

        #[test]
        fn self_error_is_zero(edges in prop::collection::vec(0u8..2, 0..20)) {
            let s = ContactGraphState::from_edges(edges);
            prop_assert!(cg_error(&s, &s).unwrap().iter().all(|&e| e == 0));
        }
    }
}
