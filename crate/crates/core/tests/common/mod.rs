#![allow(dead_code)]

use dendrite_core::rng::Stream;
use dendrite_core::topology::{ElectrodeRole, ElectrodeSpec, NetworkTopology, NodeId};
use dendrite_core::{BoundaryCondition, CouplingGeometry, DeviceParams, ElectrochemicalState, Point, SimulationCell};

/// Connected random network: a random spanning tree plus `extra` chords.
/// The first `electrodes` nodes are electrodes `E0`, `E1`, ...
pub fn random_topology(seed: u64, nodes: usize, electrodes: usize, extra: usize) -> NetworkTopology {
    let mut rng = Stream::new(seed);
    let specs = (0..electrodes)
        .map(|i| {
            ElectrodeSpec::new(
                format!("E{i}"),
                600.0 * rng.uniform() - 300.0,
                600.0 * rng.uniform() - 300.0,
                ElectrodeRole::Input,
            )
        })
        .collect();
    let mut t = NetworkTopology::from_electrodes(format!("random-{seed}"), specs);
    for _ in electrodes..nodes {
        t.add_junction(Point::new(600.0 * rng.uniform() - 300.0, 600.0 * rng.uniform() - 300.0));
    }
    let pick = |rng: &mut Stream, n: usize| ((rng.uniform() * n as f64) as usize).min(n - 1);
    for i in 1..nodes {
        let j = pick(&mut rng, i);
        let r = 1.0 + 7.0 * rng.uniform();
        let length = 20.0 + 300.0 * rng.uniform();
        t.add_segment(NodeId(i as u32), NodeId(j as u32), length, r, 80.0);
    }
    for _ in 0..extra {
        let a = pick(&mut rng, nodes);
        let b = pick(&mut rng, nodes);
        if a != b {
            let r = 1.0 + 7.0 * rng.uniform();
            let length = 20.0 + 300.0 * rng.uniform();
            t.add_segment(NodeId(a as u32), NodeId(b as u32), length, r, 80.0);
        }
    }
    t
}

pub fn random_cell(seed: u64, nodes: usize, electrodes: usize, extra: usize) -> SimulationCell {
    SimulationCell::new(
        vec![random_topology(seed, nodes, electrodes, extra)],
        5e-9,
        DeviceParams::default(),
        CouplingGeometry::default(),
    )
    .unwrap()
}

/// Doping and trapped fractions drawn inside their admissible region.
pub fn random_state(cell: &SimulationCell, seed: u64) -> ElectrochemicalState {
    let mut rng = Stream::new(seed ^ 0x5eed);
    let p = &cell.device;
    let mut state = ElectrochemicalState::pristine(cell);
    for k in 0..cell.segment_count() {
        let q = 0.2 * rng.uniform();
        let s = p.residual_doping + (1.0 - q - p.residual_doping) * rng.uniform();
        state.doping[k] = s;
        state.trapped[k] = q;
    }
    state
}

/// Every electrode held at a random voltage in [-1, 1] V, with at least one
/// held and the rest floating with probability `float_p`.
pub fn random_bc(cell: &SimulationCell, seed: u64, float_p: f64) -> BoundaryCondition {
    let mut rng = Stream::new(seed ^ 0xbc);
    let mut bc = BoundaryCondition::new();
    for (i, id) in cell.electrode_ids().enumerate() {
        if i > 0 && rng.chance(float_p) {
            continue;
        }
        bc = bc.fixed(id, 2.0 * rng.uniform() - 1.0);
    }
    bc
}

pub fn rel_diff(a: f64, b: f64, scale: f64) -> f64 {
    (a - b).abs() / scale.max(f64::MIN_POSITIVE)
}
