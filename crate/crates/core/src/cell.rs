//! Several topologies immersed in one shared electrolyte.
//!
//! [`SimulationCell`] owns the topologies, the device parameters and the
//! electrolyte coupling geometry, plus a flattened layout (global node and
//! segment indices) that the solver works on. Segment `k` of the layout is the
//! `k`-th entry of every per-segment vector in an
//! [`ElectrochemicalState`](crate::ElectrochemicalState).

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::device::{volumetric_capacitance_of, DeviceParams};
use crate::error::{Error, Result};
use crate::geometry::Point;
use crate::topology::{validate_topology, ElectrodeRole, NetworkTopology, SegmentId};

/// Distance weighting of each segment's coupling to the electrolyte.
///
/// A segment whose midpoint lies `d` µm from the capacitance-weighted
/// centroid of the cell couples with weight `(1 + d/length_scale)^-exponent`.
/// An exponent of zero makes the electrolyte a plain capacitive average.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CouplingGeometry {
    pub exponent: f64,
    pub length_scale_um: f64,
}

impl Default for CouplingGeometry {
    fn default() -> Self {
        CouplingGeometry { exponent: 1.0, length_scale_um: 200.0 }
    }
}

impl CouplingGeometry {
    pub fn uniform() -> Self {
        CouplingGeometry { exponent: 0.0, ..Self::default() }
    }

    pub fn weight(&self, distance_um: f64) -> f64 {
        libm::pow(1.0 + distance_um / self.length_scale_um, -self.exponent)
    }
}

/// Address of one segment inside a cell.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SegmentRef {
    pub topology: usize,
    pub segment: SegmentId,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ElectrodeSite {
    pub id: String,
    pub topology: usize,
    pub node: usize,
    pub role: ElectrodeRole,
    pub position: Point,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SegmentSite {
    pub reference: SegmentRef,
    /// Global node indices.
    pub nodes: [usize; 2],
    /// π·r²/L in cm.
    pub shape_factor: f64,
    pub volume_cm3: f64,
    pub capacitance: f64,
    /// Distance weight applied to `capacitance` in the electrolyte average.
    pub coupling_weight: f64,
    pub midpoint: Point,
}

/// Flattened view of a cell used by the solver.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct Layout {
    pub node_offsets: Vec<usize>,
    pub node_positions: Vec<Point>,
    pub node_labels: Vec<String>,
    /// Electrode index for electrode nodes.
    pub node_electrode: Vec<Option<usize>>,
    pub electrodes: Vec<ElectrodeSite>,
    pub segments: Vec<SegmentSite>,
    /// Connected components as sorted global node lists.
    pub components: Vec<Vec<usize>>,
    /// Segments incident to each node.
    pub incidence: Vec<Vec<usize>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimulationCell {
    pub topologies: Vec<NetworkTopology>,
    /// Double-layer capacitance of each electrode surface (F).
    pub electrode_dl_capacitance: f64,
    pub device: DeviceParams,
    pub coupling: CouplingGeometry,
    layout: Layout,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CellRecord {
    topologies: Vec<NetworkTopology>,
    electrode_dl_capacitance: f64,
    device: DeviceParams,
    #[serde(default)]
    coupling: CouplingGeometry,
}

impl Serialize for SimulationCell {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> core::result::Result<S::Ok, S::Error> {
        CellRecord {
            topologies: self.topologies.clone(),
            electrode_dl_capacitance: self.electrode_dl_capacitance,
            device: self.device.clone(),
            coupling: self.coupling.clone(),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for SimulationCell {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> core::result::Result<Self, D::Error> {
        let r = CellRecord::deserialize(deserializer)?;
        SimulationCell::new(r.topologies, r.electrode_dl_capacitance, r.device, r.coupling)
            .map_err(serde::de::Error::custom)
    }
}

/// Assembles topologies into a cell with default device parameters and
/// coupling geometry.
pub fn assemble_cell(topologies: Vec<NetworkTopology>, electrode_dl_capacitance: f64) -> Result<SimulationCell> {
    SimulationCell::new(topologies, electrode_dl_capacitance, DeviceParams::default(), CouplingGeometry::default())
}

impl SimulationCell {
    pub fn new(
        topologies: Vec<NetworkTopology>,
        electrode_dl_capacitance: f64,
        device: DeviceParams,
        coupling: CouplingGeometry,
    ) -> Result<Self> {
        if topologies.is_empty() {
            return Err(Error::Assembly("a cell needs at least one topology".into()));
        }
        if !(electrode_dl_capacitance >= 0.0 && electrode_dl_capacitance.is_finite()) {
            return Err(Error::Assembly(format!(
                "electrode double-layer capacitance must be non-negative, got {electrode_dl_capacitance}"
            )));
        }
        if !(coupling.exponent >= 0.0 && coupling.length_scale_um > 0.0) {
            return Err(Error::Assembly("coupling exponent must be >= 0 and length scale > 0".into()));
        }
        device.validate()?;
        let mut seen = BTreeSet::new();
        for t in &topologies {
            for e in &t.electrodes {
                if !seen.insert(e.id.clone()) {
                    return Err(Error::Assembly(format!("duplicate electrode id `{}`", e.id)));
                }
            }
            if let Some(issue) = validate_topology(t).first() {
                return Err(Error::InvalidTopology { topology: t.name.clone(), reason: issue.to_string() });
            }
        }
        let mut cell =
            SimulationCell { topologies, electrode_dl_capacitance, device, coupling, layout: Layout::default() };
        cell.layout = cell.build_layout();
        Ok(cell)
    }

    /// Same cell with different device parameters.
    pub fn with_device(&self, device: DeviceParams) -> Result<Self> {
        SimulationCell::new(self.topologies.clone(), self.electrode_dl_capacitance, device, self.coupling.clone())
    }

    pub fn with_coupling(&self, coupling: CouplingGeometry) -> Result<Self> {
        SimulationCell::new(self.topologies.clone(), self.electrode_dl_capacitance, self.device.clone(), coupling)
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn node_count(&self) -> usize {
        self.layout.node_positions.len()
    }

    pub fn segment_count(&self) -> usize {
        self.layout.segments.len()
    }

    pub fn electrode_ids(&self) -> impl Iterator<Item = &str> {
        self.layout.electrodes.iter().map(|e| e.id.as_str())
    }

    pub fn electrode_index(&self, id: &str) -> Result<usize> {
        self.layout.electrodes.iter().position(|e| e.id == id).ok_or_else(|| Error::UnknownElectrode(id.into()))
    }

    pub fn segment_index(&self, r: SegmentRef) -> Result<usize> {
        self.layout
            .segments
            .iter()
            .position(|s| s.reference == r)
            .ok_or(Error::UnknownSegment { topology: r.topology, segment: r.segment.0 })
    }

    /// Electrodes of one topology, in declaration order.
    pub fn topology_electrodes(&self, topology: usize) -> Vec<&str> {
        self.layout.electrodes.iter().filter(|e| e.topology == topology).map(|e| e.id.as_str()).collect()
    }

    /// Smallest doping time constant of any segment (s).
    pub fn min_time_constant(&self) -> f64 {
        let k = self.device.dedope_time_constant_per_volume.min(self.device.redope_time_constant_per_volume);
        self.layout.segments.iter().map(|s| k * s.volume_cm3).fold(f64::INFINITY, f64::min)
    }

    fn build_layout(&self) -> Layout {
        let mut l = Layout::default();
        for (ti, t) in self.topologies.iter().enumerate() {
            let offset = l.node_positions.len();
            l.node_offsets.push(offset);
            let local: BTreeMap<_, _> = t.nodes.iter().enumerate().map(|(i, n)| (n.id, offset + i)).collect();
            for n in &t.nodes {
                l.node_positions.push(n.position);
                l.node_labels.push(match &n.electrode {
                    Some(e) => e.clone(),
                    None => format!("{}:{}", t.name, n.id),
                });
                l.node_electrode.push(None);
            }
            for e in &t.electrodes {
                let node = t.electrode_node(&e.id).map(|id| local[&id]).unwrap_or(offset);
                l.node_electrode[node] = Some(l.electrodes.len());
                l.electrodes.push(ElectrodeSite {
                    id: e.id.clone(),
                    topology: ti,
                    node,
                    role: e.role,
                    position: e.position,
                });
            }
            for s in &t.segments {
                l.segments.push(SegmentSite {
                    reference: SegmentRef { topology: ti, segment: s.id },
                    nodes: [local[&s.endpoints[0]], local[&s.endpoints[1]]],
                    shape_factor: s.shape_factor_cm(),
                    volume_cm3: s.volume_cm3(),
                    capacitance: volumetric_capacitance_of(s, &self.device),
                    coupling_weight: 1.0,
                    midpoint: t.segment_midpoint(s),
                });
            }
        }

        let total_c: f64 = l.segments.iter().map(|s| s.capacitance).sum();
        if total_c > 0.0 {
            let cx = l.segments.iter().map(|s| s.capacitance * s.midpoint.x).sum::<f64>() / total_c;
            let cy = l.segments.iter().map(|s| s.capacitance * s.midpoint.y).sum::<f64>() / total_c;
            let centroid = Point::new(cx, cy);
            for s in &mut l.segments {
                s.coupling_weight = self.coupling.weight(s.midpoint.distance(centroid));
            }
        }

        let n = l.node_positions.len();
        l.incidence = vec![Vec::new(); n];
        for (k, s) in l.segments.iter().enumerate() {
            l.incidence[s.nodes[0]].push(k);
            l.incidence[s.nodes[1]].push(k);
        }
        let mut comp_of = vec![usize::MAX; n];
        for start in 0..n {
            if comp_of[start] != usize::MAX {
                continue;
            }
            let c = l.components.len();
            let mut members = Vec::new();
            let mut stack = vec![start];
            comp_of[start] = c;
            while let Some(x) = stack.pop() {
                members.push(x);
                for &k in &l.incidence[x] {
                    let [a, b] = l.segments[k].nodes;
                    let y = if a == x { b } else { a };
                    if comp_of[y] == usize::MAX {
                        comp_of[y] = c;
                        stack.push(y);
                    }
                }
            }
            members.sort_unstable();
            l.components.push(members);
        }
        l
    }
}
