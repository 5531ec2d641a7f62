//! Calibrated demo cells and the default parameter bundle.
//!
//! Geometry is in µm. Hand-built devices use straight segments; the
//! multi-terminal networks are grown from seeds.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::cell::{CouplingGeometry, SimulationCell};
use crate::device::DeviceParams;
use crate::error::Result;
use crate::geometry::Point;
use crate::protocols::{BitPattern, MacConfig, SequenceProgram, TransferConfig};
use crate::rng::{derive_seed, STREAM_GROWTH};
use crate::topology::{
    grow_network, merge_topologies, radius_from_frequency, ElectrodeRole, ElectrodeSpec, GrowthParams, NetworkTopology,
    NodeId,
};

/// Double-layer capacitance of a bare electrode (F).
pub const ELECTRODE_DL_CAPACITANCE: f64 = 5e-9;

/// Relative read noise of the demo measurements.
pub const DEMO_READ_NOISE: f64 = 0.001;

/// Seed of the default multi-terminal network.
pub const DEMO_SEED: u64 = 68;

pub fn device_params() -> DeviceParams {
    DeviceParams::default()
}

fn cell(topologies: Vec<NetworkTopology>) -> Result<SimulationCell> {
    SimulationCell::new(topologies, ELECTRODE_DL_CAPACITANCE, device_params(), CouplingGeometry::default())
}

/// Builds a topology from electrodes, extra junctions and straight segments
/// given as `(from, to, radius_um)` with node indices counted electrodes
/// first, then junctions.
fn straight(
    name: &str,
    electrodes: Vec<ElectrodeSpec>,
    junctions: &[(f64, f64)],
    segments: &[(u32, u32, f64)],
    frequency_hz: f64,
) -> NetworkTopology {
    let mut t = NetworkTopology::from_electrodes(name, electrodes);
    for &(x, y) in junctions {
        t.add_junction(Point::new(x, y));
    }
    for &(a, b, r) in segments {
        t.add_straight_segment(NodeId(a), NodeId(b), r, frequency_hz);
    }
    t
}

// ---------------------------------------------------------------------------
// Y-shaped four-terminal device
// ---------------------------------------------------------------------------

/// Electrodes of the Y device: thin input arm `A`, mirror-image bulky arms
/// `B` and `D`, and the core electrode `C` on a short stub next to the
/// junction.
pub const Y_ELECTRODES: [&str; 4] = ["A", "B", "C", "D"];

pub fn y_device() -> Result<SimulationCell> {
    let t = straight(
        "y-device",
        vec![
            ElectrodeSpec::new("A", 0.0, 260.0, ElectrodeRole::Input),
            ElectrodeSpec::new("B", -230.0, -160.0, ElectrodeRole::Floating),
            ElectrodeSpec::new("C", 0.0, -40.0, ElectrodeRole::Ground),
            ElectrodeSpec::new("D", 230.0, -160.0, ElectrodeRole::Floating),
        ],
        &[(0.0, 0.0)],
        &[(0, 4, 2.0), (1, 4, 7.0), (2, 4, 6.0), (3, 4, 7.0)],
        80.0,
    );
    cell(vec![t])
}

// ---------------------------------------------------------------------------
// Inter-gating pair
// ---------------------------------------------------------------------------

/// A bulky dendrite grown at 25 Hz between `K1`/`K2` and a thin one grown at
/// 200 Hz between `T1`/`T2`, electrically disjoint.
pub fn intergating_pair() -> Result<SimulationCell> {
    let g = GrowthParams::default();
    let thick = radius_from_frequency(25.0, &g)?;
    let thin = radius_from_frequency(200.0, &g)?;
    let bulky = straight(
        "bulky",
        vec![
            ElectrodeSpec::new("K1", -300.0, 60.0, ElectrodeRole::OutputSource),
            ElectrodeSpec::new("K2", -100.0, 60.0, ElectrodeRole::OutputDrain),
        ],
        &[],
        &[(0, 1, thick)],
        25.0,
    );
    let slim = straight(
        "thin",
        vec![
            ElectrodeSpec::new("T1", -400.0, -60.0, ElectrodeRole::OutputSource),
            ElectrodeSpec::new("T2", 400.0, -60.0, ElectrodeRole::OutputDrain),
        ],
        &[],
        &[(0, 1, thin)],
        200.0,
    );
    cell(vec![bulky, slim])
}

/// The bulky dendrite gates the thin channel.
pub fn bulky_gate_transfer() -> TransferConfig {
    TransferConfig::new("K1", "T1", "T2")
}

/// The thin dendrite gates the bulky channel.
pub fn thin_gate_transfer() -> TransferConfig {
    TransferConfig::new("T1", "K1", "K2")
}

// ---------------------------------------------------------------------------
// MAC cell
// ---------------------------------------------------------------------------

pub const MAC_INPUTS: [&str; 3] = ["IN1", "IN2", "IN3"];

/// Three input arms joined to a grounded core, next to a fine readout
/// dendrite `S`-`D` that is not connected to them.
pub fn mac_cell() -> Result<SimulationCell> {
    let inputs = straight(
        "mac-inputs",
        vec![
            ElectrodeSpec::new("IN1", -200.0, 160.0, ElectrodeRole::Input),
            ElectrodeSpec::new("IN2", 0.0, 320.0, ElectrodeRole::Input),
            ElectrodeSpec::new("IN3", 200.0, 100.0, ElectrodeRole::Input),
            ElectrodeSpec::new("G", 0.0, 0.0, ElectrodeRole::Ground),
        ],
        &[(0.0, 120.0)],
        &[(0, 4, 4.9), (1, 4, 3.8), (2, 4, 5.5), (3, 4, 9.0)],
        80.0,
    );
    let readout = straight(
        "mac-readout",
        vec![
            ElectrodeSpec::new("S", 60.0, -40.0, ElectrodeRole::OutputSource),
            ElectrodeSpec::new("D", 140.0, -40.0, ElectrodeRole::OutputDrain),
        ],
        &[],
        &[(0, 1, 0.6)],
        2000.0,
    );
    cell(vec![inputs, readout])
}

pub fn mac_config() -> MacConfig {
    MacConfig::new(&MAC_INPUTS, "S", "D")
}

// ---------------------------------------------------------------------------
// Multi-terminal networks for sequences
// ---------------------------------------------------------------------------

/// Input-capable electrodes of the sequence network.
pub const NETWORK_ELECTRODES: [&str; 8] = ["E1", "E2", "E3", "E4", "E5", "E6", "E7", "E8"];

/// Input triples of the three spatial projections.
pub const SPATIAL_PROJECTIONS: [(&str, [&str; 3]); 3] =
    [("SP1", ["E1", "E2", "E3"]), ("SP2", ["E1", "E2", "E5"]), ("SP3", ["E1", "E6", "E3"])];

pub fn network_growth(seed: u64) -> GrowthParams {
    GrowthParams { seed: derive_seed(seed, STREAM_GROWTH), ..GrowthParams::default() }
}

fn ring_electrodes(ids: &[&str], center: Point, radius: f64, phase: f64) -> Vec<ElectrodeSpec> {
    let n = ids.len();
    ids.iter()
        .enumerate()
        .map(|(i, id)| {
            let a = phase + core::f64::consts::TAU * i as f64 / n as f64;
            let p = center + Point::from_angle(a) * radius;
            ElectrodeSpec::new(*id, p.x, p.y, ElectrodeRole::Input)
        })
        .collect()
}

/// Eight electrodes on a ring around a central readout pair, grown from
/// `seed`. Alternate electrodes grow toward the readout, the rest toward a
/// neighbour.
pub fn sequence_network(seed: u64) -> Result<SimulationCell> {
    sequence_network_with(&network_growth(seed))
}

/// The sequence network grown with explicit growth parameters.
pub fn sequence_network_with(growth: &GrowthParams) -> Result<SimulationCell> {
    let mut electrodes = ring_electrodes(&NETWORK_ELECTRODES, Point::new(0.0, 0.0), 320.0, 0.3);
    for (i, e) in electrodes.iter_mut().enumerate() {
        let target = if i % 2 == 0 {
            if i % 4 == 0 {
                "S"
            } else {
                "D"
            }
        } else {
            NETWORK_ELECTRODES[(i + 1) % 8]
        };
        e.grow_toward = Some(target.into());
    }
    electrodes.push(ElectrodeSpec::new("S", -90.0, 0.0, ElectrodeRole::OutputSource).growing_toward("D"));
    electrodes.push(ElectrodeSpec::new("D", 90.0, 0.0, ElectrodeRole::OutputDrain).growing_toward("S"));
    let t = grow_network("network", &electrodes, growth)?;
    cell(vec![t])
}

/// Sequence program for one input triple of the default network.
pub fn sequence_program(inputs: [&str; 3]) -> SequenceProgram {
    SequenceProgram {
        input_electrodes: inputs.iter().map(|s| String::from(*s)).collect(),
        patterns: BitPattern::default_order(),
        readout_source: "S".into(),
        readout_drain: "D".into(),
        read_noise: DEMO_READ_NOISE,
        ..SequenceProgram::default()
    }
}

/// The default presentation order with its patterns shuffled.
pub fn shuffled_order() -> Vec<BitPattern> {
    ["010", "101", "000", "001", "111", "100", "011", "110"].iter().map(|s| s.parse().unwrap()).collect()
}

/// Left network grown at 80 Hz and right network grown at 500 Hz, both
/// attached to one readout dendrite `S`-`D` between them.
pub fn twin_networks(seed: u64) -> Result<SimulationCell> {
    let base = network_growth(seed);
    let left_ids = ["L1", "L2", "L3", "L4"];
    let right_ids = ["R1", "R2", "R3", "R4"];
    let mut left: Vec<ElectrodeSpec> = left_ids
        .iter()
        .enumerate()
        .map(|(i, id)| ElectrodeSpec::new(*id, -330.0, -270.0 + 180.0 * i as f64, ElectrodeRole::Input))
        .collect();
    for (i, e) in left.iter_mut().enumerate() {
        e.grow_toward = Some(if i % 2 == 0 { "S".into() } else { left_ids[(i + 1) % 4].into() });
    }
    left.push(ElectrodeSpec::new("S", 0.0, -110.0, ElectrodeRole::OutputSource).growing_toward("D"));
    left.push(ElectrodeSpec::new("D", 0.0, 110.0, ElectrodeRole::OutputDrain).growing_toward("S"));
    let l = grow_network("left", &left, &GrowthParams { frequency_hz: 80.0, ..base.clone() })?;

    let mut right: Vec<ElectrodeSpec> = right_ids
        .iter()
        .enumerate()
        .map(|(i, id)| ElectrodeSpec::new(*id, 330.0, -270.0 + 180.0 * i as f64, ElectrodeRole::Input))
        .collect();
    for (i, e) in right.iter_mut().enumerate() {
        e.grow_toward = Some(if i % 2 == 0 { "D".into() } else { right_ids[(i + 1) % 4].into() });
    }
    right.push(ElectrodeSpec::new("S", 0.0, -110.0, ElectrodeRole::OutputSource));
    right.push(ElectrodeSpec::new("D", 0.0, 110.0, ElectrodeRole::OutputDrain));
    let r =
        grow_network("right", &right, &GrowthParams { frequency_hz: 500.0, seed: derive_seed(base.seed, 1), ..base })?;
    cell(vec![merge_topologies(format!("twins-{seed}"), &l, &r)])
}

pub const TWIN_LEFT_INPUTS: [&str; 3] = ["L1", "L2", "L3"];
pub const TWIN_RIGHT_INPUTS: [&str; 3] = ["R1", "R2", "R3"];

pub fn y_electrode_names() -> Vec<String> {
    Y_ELECTRODES.iter().map(|s| String::from(*s)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::validate_topology;

    #[test]
    fn demo_cells_assemble() {
        y_device().unwrap();
        intergating_pair().unwrap();
        mac_cell().unwrap();
        let net = sequence_network(DEMO_SEED).unwrap();
        assert!(validate_topology(&net.topologies[0]).is_empty());
        twin_networks(DEMO_SEED).unwrap();
    }
}
