//! Dendritic network geometry and stochastic growth.
//!
//! A [`NetworkTopology`] is a planar graph: electrodes and junctions are
//! nodes, dendrite segments are edges carrying a length and a radius. Grown
//! topologies come from [`grow_network`], a seeded biased random walk with
//! branching whose segment radius follows [`radius_from_frequency`].

use alloc::collections::{BTreeMap, BTreeSet, VecDeque};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{polyline_length, polyline_midpoint, Point};
use crate::rng::Stream;

const UM_TO_CM: f64 = 1e-4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ElectrodeRole {
    Input,
    OutputSource,
    OutputDrain,
    Ground,
    Floating,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ElectrodeSpec {
    pub id: String,
    /// Position in µm.
    pub position: Point,
    pub role: ElectrodeRole,
    /// Counter-electrode a dendrite grows toward from this electrode.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grow_toward: Option<String>,
}

impl ElectrodeSpec {
    pub fn new(id: impl Into<String>, x: f64, y: f64, role: ElectrodeRole) -> Self {
        ElectrodeSpec { id: id.into(), position: Point::new(x, y), role, grow_toward: None }
    }

    pub fn growing_toward(mut self, target: impl Into<String>) -> Self {
        self.grow_toward = Some(target.into());
        self
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub u32);

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SegmentId(pub u32);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "n{}", self.0)
    }
}

impl fmt::Display for SegmentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "s{}", self.0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Node {
    pub id: NodeId,
    pub position: Point,
    /// Electrode id when this node is an electrode.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub electrode: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DendriteSegment {
    pub id: SegmentId,
    pub endpoints: [NodeId; 2],
    pub length_um: f64,
    pub radius_um: f64,
    pub growth_frequency_hz: f64,
    /// Polyline followed by the fibre, endpoints included. Empty for straight
    /// hand-built segments.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub path: Vec<Point>,
}

impl DendriteSegment {
    pub fn cross_section_cm2(&self) -> f64 {
        let r = self.radius_um * UM_TO_CM;
        PI * r * r
    }

    pub fn length_cm(&self) -> f64 {
        self.length_um * UM_TO_CM
    }

    /// π·r²·L in cm³.
    pub fn volume_cm3(&self) -> f64 {
        self.cross_section_cm2() * self.length_cm()
    }

    /// Geometric factor A/L (cm) converting conductivity into conductance.
    pub fn shape_factor_cm(&self) -> f64 {
        self.cross_section_cm2() / self.length_cm()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkTopology {
    pub name: String,
    pub electrodes: Vec<ElectrodeSpec>,
    pub nodes: Vec<Node>,
    pub segments: Vec<DendriteSegment>,
    /// Set when growth ran out of budget before joining a source to its
    /// counter-electrode. Floating dendrites are physical, so this is a flag
    /// rather than an error.
    #[serde(default)]
    pub unconnected: bool,
    /// Parameters the topology was grown with, if it was grown.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub growth: Option<GrowthParams>,
}

impl NetworkTopology {
    /// Topology with one node per electrode and no segments.
    pub fn from_electrodes(name: impl Into<String>, electrodes: Vec<ElectrodeSpec>) -> Self {
        let nodes = electrodes
            .iter()
            .enumerate()
            .map(|(i, e)| Node { id: NodeId(i as u32), position: e.position, electrode: Some(e.id.clone()) })
            .collect();
        NetworkTopology { name: name.into(), electrodes, nodes, segments: Vec::new(), unconnected: false, growth: None }
    }

    pub fn node(&self, id: NodeId) -> Option<&Node> {
        self.nodes.iter().find(|n| n.id == id)
    }

    pub fn electrode_node(&self, electrode: &str) -> Option<NodeId> {
        self.nodes.iter().find(|n| n.electrode.as_deref() == Some(electrode)).map(|n| n.id)
    }

    pub fn add_junction(&mut self, position: Point) -> NodeId {
        let id = NodeId(self.nodes.iter().map(|n| n.id.0 + 1).max().unwrap_or(0));
        self.nodes.push(Node { id, position, electrode: None });
        id
    }

    /// Adds a straight segment between two existing nodes.
    pub fn add_straight_segment(
        &mut self,
        a: NodeId,
        b: NodeId,
        radius_um: f64,
        growth_frequency_hz: f64,
    ) -> SegmentId {
        let pa = self.node(a).map(|n| n.position).unwrap_or_default();
        let pb = self.node(b).map(|n| n.position).unwrap_or_default();
        self.add_segment(a, b, pa.distance(pb), radius_um, growth_frequency_hz)
    }

    pub fn add_segment(
        &mut self,
        a: NodeId,
        b: NodeId,
        length_um: f64,
        radius_um: f64,
        growth_frequency_hz: f64,
    ) -> SegmentId {
        let id = SegmentId(self.segments.iter().map(|s| s.id.0 + 1).max().unwrap_or(0));
        self.segments.push(DendriteSegment {
            id,
            endpoints: [a, b],
            length_um,
            radius_um,
            growth_frequency_hz,
            path: Vec::new(),
        });
        id
    }

    /// Geometric midpoint of a segment: along its path when it has one.
    pub fn segment_midpoint(&self, segment: &DendriteSegment) -> Point {
        if let Some(p) = polyline_midpoint(&segment.path) {
            return p;
        }
        let pa = self.node(segment.endpoints[0]).map(|n| n.position).unwrap_or_default();
        let pb = self.node(segment.endpoints[1]).map(|n| n.position).unwrap_or_default();
        pa.lerp(pb, 0.5)
    }

    pub fn total_length_um(&self) -> f64 {
        self.segments.iter().map(|s| s.length_um).sum()
    }
}

/// Growth waveform and walk parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GrowthParams {
    /// Fibre radius (µm) obtained at `reference_frequency_hz`.
    pub reference_radius_um: f64,
    pub reference_frequency_hz: f64,
    pub thinning_exponent: f64,
    /// Frequency of the AC growth waveform.
    pub frequency_hz: f64,
    /// Peak amplitude of the growth waveform (V). Recorded, not simulated.
    pub peak_voltage: f64,
    pub step_length_um: f64,
    pub branch_probability: f64,
    /// 1 walks straight at the counter-electrode, 0 is an unbiased walk.
    pub field_bias: f64,
    /// Steps each growth front may take.
    pub step_budget: u32,
    /// Hard cap on concurrently spawned fronts.
    pub max_fronts: u32,
    /// A front touching a fibre or electrode closer than this joins it.
    pub contact_radius_um: f64,
    pub electrode_radius_um: f64,
    /// Junction-to-junction segments shorter than this are contracted.
    pub min_segment_length_um: f64,
    pub seed: u64,
}

impl Default for GrowthParams {
    fn default() -> Self {
        GrowthParams {
            reference_radius_um: 6.0,
            reference_frequency_hz: 80.0,
            thinning_exponent: 0.5,
            frequency_hz: 80.0,
            peak_voltage: 5.0,
            step_length_um: 10.0,
            branch_probability: 0.04,
            field_bias: 0.55,
            step_budget: 120,
            max_fronts: 48,
            contact_radius_um: 8.0,
            electrode_radius_um: 20.0,
            min_segment_length_um: 30.0,
            seed: 0,
        }
    }
}

impl GrowthParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("reference_radius_um", self.reference_radius_um),
            ("reference_frequency_hz", self.reference_frequency_hz),
            ("thinning_exponent", self.thinning_exponent),
            ("frequency_hz", self.frequency_hz),
            ("step_length_um", self.step_length_um),
            ("contact_radius_um", self.contact_radius_um),
            ("electrode_radius_um", self.electrode_radius_um),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::domain(format!("growth parameter {name} must be positive, got {v}")));
            }
        }
        for (name, v) in [("branch_probability", self.branch_probability), ("field_bias", self.field_bias)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::domain(format!("growth parameter {name} must lie in [0, 1], got {v}")));
            }
        }
        if !(self.min_segment_length_um >= 0.0) {
            return Err(Error::domain("min_segment_length_um must be non-negative"));
        }
        Ok(())
    }
}

/// Fibre radius grown at `frequency`: a power law that thins with frequency.
pub fn radius_from_frequency(frequency: f64, params: &GrowthParams) -> Result<f64> {
    if !(frequency > 0.0 && frequency.is_finite()) {
        return Err(Error::domain(format!("growth frequency must be positive, got {frequency}")));
    }
    if !(params.reference_frequency_hz > 0.0 && params.reference_radius_um > 0.0) {
        return Err(Error::domain("reference radius and frequency must be positive"));
    }
    Ok(params.reference_radius_um * libm::pow(frequency / params.reference_frequency_hz, -params.thinning_exponent))
}

// ---------------------------------------------------------------------------
// Growth
// ---------------------------------------------------------------------------

struct FineNode {
    position: Point,
    electrode: Option<usize>,
    front: Option<usize>,
}

struct Front {
    tip: usize,
    origin: usize,
    target: usize,
    heading: f64,
    steps_left: u32,
    /// Steps taken so far; fresh branches ignore contacts for a few steps.
    age: u32,
}

/// Grows dendrites from every electrode carrying a `grow_toward` target.
///
/// Fronts advance round-robin, one step each per sweep, so fronts grown from
/// both ends of a pair meet in the middle the way AC growth does. A front
/// stops when it reaches an electrode, touches a fibre grown by another front,
/// or exhausts its step budget.
pub fn grow_network(
    name: impl Into<String>,
    electrodes: &[ElectrodeSpec],
    params: &GrowthParams,
) -> Result<NetworkTopology> {
    params.validate()?;
    if electrodes.len() < 2 {
        return Err(Error::domain("growth needs at least two electrodes"));
    }
    let mut seen = BTreeSet::new();
    for e in electrodes {
        if !seen.insert(e.id.as_str()) {
            return Err(Error::domain(format!("duplicate electrode id `{}`", e.id)));
        }
        if !e.position.is_finite() {
            return Err(Error::domain(format!("electrode `{}` has a non-finite position", e.id)));
        }
    }
    let index_of = |id: &str| electrodes.iter().position(|e| e.id == id);

    let radius = radius_from_frequency(params.frequency_hz, params)?;
    let mut rng = Stream::new(params.seed);

    let mut fine: Vec<FineNode> = electrodes
        .iter()
        .enumerate()
        .map(|(i, e)| FineNode { position: e.position, electrode: Some(i), front: None })
        .collect();
    let mut edges: Vec<(usize, usize)> = Vec::new();
    let mut fronts: Vec<Front> = Vec::new();
    let mut pairs: Vec<(usize, usize)> = Vec::new();

    for (i, e) in electrodes.iter().enumerate() {
        if let Some(target) = &e.grow_toward {
            let t = index_of(target).ok_or_else(|| Error::UnknownElectrode(target.clone()))?;
            if t == i {
                return Err(Error::domain(format!("electrode `{}` cannot grow toward itself", e.id)));
            }
            let heading = (electrodes[t].position - e.position).angle();
            fronts.push(Front { tip: i, origin: i, target: t, heading, steps_left: params.step_budget, age: 0 });
            pairs.push((i, t));
        }
    }

    let mut active: VecDeque<usize> = (0..fronts.len()).collect();
    while !active.is_empty() {
        let mut next_round = VecDeque::new();
        while let Some(fi) = active.pop_front() {
            if let Some(done) = advance_front(fi, &mut fronts, &mut fine, &mut edges, electrodes, params, &mut rng) {
                if !done {
                    next_round.push_back(fi);
                    // Branching: a new front leaves the current tip.
                    if fronts.len() < params.max_fronts as usize && rng.chance(params.branch_probability) {
                        let parent = &fronts[fi];
                        let side = if rng.chance(0.5) { 1.0 } else { -1.0 };
                        let spread = PI / 6.0 + rng.uniform() * PI / 6.0;
                        let branch = Front {
                            tip: parent.tip,
                            origin: parent.tip,
                            target: parent.target,
                            heading: parent.heading + side * spread,
                            steps_left: parent.steps_left,
                            age: 0,
                        };
                        fronts.push(branch);
                        next_round.push_back(fronts.len() - 1);
                    }
                }
            }
        }
        active = next_round;
    }

    let mut topo = coarsen(name.into(), electrodes, &fine, &edges, radius, params)?;
    topo.unconnected = !pairs.iter().all(|&(a, b)| {
        let na = topo.electrode_node(&electrodes[a].id);
        let nb = topo.electrode_node(&electrodes[b].id);
        match (na, nb) {
            (Some(na), Some(nb)) => same_component(&topo, na, nb),
            _ => false,
        }
    });
    topo.growth = Some(params.clone());
    Ok(topo)
}

/// Advances one front by a step. Returns `Some(true)` when the front stopped.
fn advance_front(
    fi: usize,
    fronts: &mut [Front],
    fine: &mut Vec<FineNode>,
    edges: &mut Vec<(usize, usize)>,
    electrodes: &[ElectrodeSpec],
    params: &GrowthParams,
    rng: &mut Stream,
) -> Option<bool> {
    let front = &fronts[fi];
    if front.steps_left == 0 {
        return Some(true);
    }
    let pos = fine[front.tip].position;
    let target_pos = electrodes[front.target].position;
    let to_target = (target_pos - pos).normalized().unwrap_or(Point::from_angle(front.heading));
    // Persistent random heading, re-aimed by the field bias.
    let wander = front.heading + (rng.uniform() - 0.5) * PI;
    let mix = to_target * params.field_bias + Point::from_angle(wander) * (1.0 - params.field_bias);
    let dir = mix.normalized().unwrap_or(to_target);
    let new_pos = pos + dir * params.step_length_um;

    let front = &mut fronts[fi];
    front.heading = dir.angle();
    front.steps_left -= 1;
    front.age += 1;
    let (tip, origin, age) = (front.tip, front.origin, front.age);

    // Electrode contact (any electrode other than where this front started).
    let mut hit_electrode = None;
    for (ei, e) in electrodes.iter().enumerate() {
        if fine[ei].front.is_none() && ei != origin && e.position.distance(new_pos) <= params.electrode_radius_um {
            hit_electrode = Some(ei);
            break;
        }
    }
    if let Some(ei) = hit_electrode {
        if ei != tip {
            edges.push((tip, ei));
        }
        return Some(true);
    }

    // Fibre contact: nodes laid by other fronts, away from this front's origin.
    if age > 2 {
        let mut best: Option<(usize, f64)> = None;
        for (ni, n) in fine.iter().enumerate() {
            if n.electrode.is_some() || n.front == Some(fi) || ni == origin {
                continue;
            }
            let d = n.position.distance(new_pos);
            if d <= params.contact_radius_um && best.is_none_or(|(_, bd)| d < bd) {
                best = Some((ni, d));
            }
        }
        if let Some((ni, _)) = best {
            if ni != tip {
                edges.push((tip, ni));
            }
            return Some(true);
        }
    }

    fine.push(FineNode { position: new_pos, electrode: None, front: Some(fi) });
    let new_idx = fine.len() - 1;
    edges.push((tip, new_idx));
    fronts[fi].tip = new_idx;
    Some(fronts[fi].steps_left == 0)
}

/// Collapses chains of degree-2 fine nodes into polyline segments and
/// contracts very short junction-to-junction segments.
fn coarsen(
    name: String,
    electrodes: &[ElectrodeSpec],
    fine: &[FineNode],
    edges: &[(usize, usize)],
    radius: f64,
    params: &GrowthParams,
) -> Result<NetworkTopology> {
    let n = fine.len();
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut edge_set = BTreeSet::new();
    for &(a, b) in edges {
        if a == b {
            continue;
        }
        let key = (a.min(b), a.max(b));
        if edge_set.insert(key) {
            adj[a].push(b);
            adj[b].push(a);
        }
    }

    // Union-find used to contract short segments.
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }

    let is_key = |i: usize, adj: &[Vec<usize>]| fine[i].electrode.is_some() || adj[i].len() != 2;

    // Trace polylines between key nodes.
    let mut chains: Vec<Vec<usize>> = Vec::new();
    let mut used = BTreeSet::new();
    for start in 0..n {
        if !is_key(start, &adj) {
            continue;
        }
        for &first in &adj[start] {
            if used.contains(&(start.min(first), start.max(first))) {
                continue;
            }
            let mut chain = vec![start, first];
            used.insert((start.min(first), start.max(first)));
            let mut prev = start;
            let mut cur = first;
            while !is_key(cur, &adj) {
                let next = if adj[cur][0] != prev { adj[cur][0] } else { adj[cur][1] };
                used.insert((cur.min(next), cur.max(next)));
                chain.push(next);
                prev = cur;
                cur = next;
            }
            chains.push(chain);
        }
    }

    // Contract short chains between junctions, and drop short dangling tips.
    let chain_len = |c: &[usize]| {
        let pts: Vec<Point> = c.iter().map(|&i| fine[i].position).collect();
        polyline_length(&pts)
    };
    let mut degree: BTreeMap<usize, usize> = BTreeMap::new();
    for c in &chains {
        *degree.entry(c[0]).or_default() += 1;
        *degree.entry(*c.last().unwrap()).or_default() += 1;
    }
    let mut dropped = vec![false; chains.len()];
    for (ci, c) in chains.iter().enumerate() {
        let (a, b) = (c[0], *c.last().unwrap());
        if chain_len(c) >= params.min_segment_length_um {
            continue;
        }
        let a_tip = fine[a].electrode.is_none() && degree[&a] == 1;
        let b_tip = fine[b].electrode.is_none() && degree[&b] == 1;
        if a_tip || b_tip {
            dropped[ci] = true;
            continue;
        }
        if fine[a].electrode.is_some() && fine[b].electrode.is_some() {
            continue;
        }
        let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
        if ra == rb {
            dropped[ci] = true;
            continue;
        }
        // Electrodes survive contraction; otherwise keep the lower index.
        let keep_a = fine[ra].electrode.is_some() || (fine[rb].electrode.is_none() && ra < rb);
        if keep_a {
            parent[rb] = ra;
        } else {
            parent[ra] = rb;
        }
        dropped[ci] = true;
    }

    // Emit nodes: electrodes first in spec order, then junctions in fine order.
    let mut topo = NetworkTopology::from_electrodes(name, electrodes.to_vec());
    let mut node_of: BTreeMap<usize, NodeId> = BTreeMap::new();
    for (i, _) in electrodes.iter().enumerate() {
        node_of.insert(i, NodeId(i as u32));
    }
    let mut segments_out: Vec<(NodeId, NodeId, Vec<Point>)> = Vec::new();
    for (ci, c) in chains.iter().enumerate() {
        if dropped[ci] {
            continue;
        }
        let a = find(&mut parent, c[0]);
        let b = find(&mut parent, *c.last().unwrap());
        if a == b {
            continue;
        }
        for end in [a, b] {
            node_of.entry(end).or_insert_with(|| topo.add_junction(fine[end].position));
        }
        let mut path: Vec<Point> = c.iter().map(|&i| fine[i].position).collect();
        path[0] = fine[a].position;
        *path.last_mut().unwrap() = fine[b].position;
        segments_out.push((node_of[&a], node_of[&b], path));
    }
    for (a, b, path) in segments_out {
        let length = polyline_length(&path).max(1e-6);
        let id = topo.add_segment(a, b, length, radius, params.frequency_hz);
        topo.segments.last_mut().unwrap().path = path;
        debug_assert_eq!(topo.segments.last().unwrap().id, id);
    }
    // Junctions can only be orphaned by dropping every chain touching them.
    prune_isolated_junctions(&mut topo);
    Ok(topo)
}

fn prune_isolated_junctions(topo: &mut NetworkTopology) {
    let used: BTreeSet<NodeId> = topo.segments.iter().flat_map(|s| s.endpoints).collect();
    let keep: Vec<bool> = topo.nodes.iter().map(|n| n.electrode.is_some() || used.contains(&n.id)).collect();
    if keep.iter().all(|&k| k) {
        return;
    }
    let mut remap = BTreeMap::new();
    let mut nodes = Vec::new();
    for (n, k) in topo.nodes.iter().zip(keep) {
        if k {
            let id = NodeId(nodes.len() as u32);
            remap.insert(n.id, id);
            nodes.push(Node { id, ..n.clone() });
        }
    }
    for s in &mut topo.segments {
        s.endpoints = [remap[&s.endpoints[0]], remap[&s.endpoints[1]]];
    }
    topo.nodes = nodes;
}

fn same_component(topo: &NetworkTopology, a: NodeId, b: NodeId) -> bool {
    let comps = components(topo);
    comps.iter().any(|c| c.contains(&a) && c.contains(&b))
}

/// Connected components of a topology, as sets of node ids.
pub fn components(topo: &NetworkTopology) -> Vec<BTreeSet<NodeId>> {
    let mut adj: BTreeMap<NodeId, Vec<NodeId>> = topo.nodes.iter().map(|n| (n.id, Vec::new())).collect();
    for s in &topo.segments {
        let [a, b] = s.endpoints;
        if adj.contains_key(&a) && adj.contains_key(&b) {
            adj.get_mut(&a).unwrap().push(b);
            adj.get_mut(&b).unwrap().push(a);
        }
    }
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for n in &topo.nodes {
        if seen.contains(&n.id) {
            continue;
        }
        let mut comp = BTreeSet::new();
        let mut stack = vec![n.id];
        while let Some(x) = stack.pop() {
            if !seen.insert(x) {
                continue;
            }
            comp.insert(x);
            stack.extend(adj[&x].iter().copied());
        }
        out.push(comp);
    }
    out
}

/// Joins two topologies into one. Electrodes with the same id become one
/// node; everything else is appended with fresh ids.
pub fn merge_topologies(name: impl Into<String>, a: &NetworkTopology, b: &NetworkTopology) -> NetworkTopology {
    let mut out = a.clone();
    out.name = name.into();
    out.growth = None;
    out.unconnected = a.unconnected || b.unconnected;
    let mut remap = BTreeMap::new();
    for n in &b.nodes {
        let shared = n.electrode.as_deref().and_then(|e| out.electrode_node(e));
        let id = match shared {
            Some(id) => id,
            None => {
                let id = out.add_junction(n.position);
                out.nodes.last_mut().unwrap().electrode = n.electrode.clone();
                id
            }
        };
        remap.insert(n.id, id);
    }
    for e in &b.electrodes {
        if !out.electrodes.iter().any(|x| x.id == e.id) {
            out.electrodes.push(e.clone());
        }
    }
    for s in &b.segments {
        let id = out.add_segment(
            remap[&s.endpoints[0]],
            remap[&s.endpoints[1]],
            s.length_um,
            s.radius_um,
            s.growth_frequency_hz,
        );
        let path = s.path.clone();
        if let Some(seg) = out.segments.iter_mut().find(|x| x.id == id) {
            seg.path = path;
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Validation
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq)]
pub enum TopologyIssue {
    TooFewElectrodes(usize),
    DuplicateElectrode(String),
    DuplicateNode(NodeId),
    DuplicateSegment(SegmentId),
    NonFinitePosition(String),
    /// Electrode listed without a node, or a node naming an unknown electrode.
    ElectrodeNodeMismatch(String),
    DanglingEndpoint {
        segment: SegmentId,
        node: NodeId,
    },
    SelfLoop(SegmentId),
    NonPositiveGeometry(SegmentId),
    FloatingComponent(Vec<NodeId>),
}

impl fmt::Display for TopologyIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TopologyIssue::TooFewElectrodes(n) => write!(f, "only {n} electrode(s); at least two required"),
            TopologyIssue::DuplicateElectrode(id) => write!(f, "duplicate electrode id `{id}`"),
            TopologyIssue::DuplicateNode(id) => write!(f, "duplicate node id {id}"),
            TopologyIssue::DuplicateSegment(id) => write!(f, "duplicate segment id {id}"),
            TopologyIssue::NonFinitePosition(what) => write!(f, "non-finite position on {what}"),
            TopologyIssue::ElectrodeNodeMismatch(id) => write!(f, "electrode `{id}` does not map to exactly one node"),
            TopologyIssue::DanglingEndpoint { segment, node } => {
                write!(f, "dangling endpoint: segment {segment} references missing node {node}")
            }
            TopologyIssue::SelfLoop(id) => write!(f, "segment {id} is a self-loop"),
            TopologyIssue::NonPositiveGeometry(id) => write!(f, "segment {id} has non-positive length or radius"),
            TopologyIssue::FloatingComponent(nodes) => {
                write!(f, "floating component without electrode ({} node(s))", nodes.len())
            }
        }
    }
}

/// Lists every violated topology invariant. An empty report means valid.
pub fn validate_topology(topo: &NetworkTopology) -> Vec<TopologyIssue> {
    let mut issues = Vec::new();
    if topo.electrodes.len() < 2 {
        issues.push(TopologyIssue::TooFewElectrodes(topo.electrodes.len()));
    }
    let mut ids = BTreeSet::new();
    for e in &topo.electrodes {
        if !ids.insert(e.id.as_str()) {
            issues.push(TopologyIssue::DuplicateElectrode(e.id.clone()));
        }
        if !e.position.is_finite() {
            issues.push(TopologyIssue::NonFinitePosition(format!("electrode `{}`", e.id)));
        }
        let count = topo.nodes.iter().filter(|n| n.electrode.as_deref() == Some(e.id.as_str())).count();
        if count != 1 {
            issues.push(TopologyIssue::ElectrodeNodeMismatch(e.id.clone()));
        }
    }
    let mut node_ids = BTreeSet::new();
    for n in &topo.nodes {
        if !node_ids.insert(n.id) {
            issues.push(TopologyIssue::DuplicateNode(n.id));
        }
        if !n.position.is_finite() {
            issues.push(TopologyIssue::NonFinitePosition(n.id.to_string()));
        }
        if let Some(e) = &n.electrode {
            if !ids.contains(e.as_str()) {
                issues.push(TopologyIssue::ElectrodeNodeMismatch(e.clone()));
            }
        }
    }
    let mut seg_ids = BTreeSet::new();
    for s in &topo.segments {
        if !seg_ids.insert(s.id) {
            issues.push(TopologyIssue::DuplicateSegment(s.id));
        }
        for node in s.endpoints {
            if !node_ids.contains(&node) {
                issues.push(TopologyIssue::DanglingEndpoint { segment: s.id, node });
            }
        }
        if s.endpoints[0] == s.endpoints[1] {
            issues.push(TopologyIssue::SelfLoop(s.id));
        }
        let ok = |v: f64| v > 0.0 && v.is_finite();
        if !(ok(s.length_um) && ok(s.radius_um) && ok(s.growth_frequency_hz)) {
            issues.push(TopologyIssue::NonPositiveGeometry(s.id));
        }
    }
    for comp in components(topo) {
        let has_electrode = comp.iter().any(|id| topo.node(*id).is_some_and(|n| n.electrode.is_some()));
        if !has_electrode {
            issues.push(TopologyIssue::FloatingComponent(comp.into_iter().collect()));
        }
    }
    issues
}
