//! Lumped electrochemical model of one dendrite segment.
//!
//! A segment carries a doping fraction `s` (1 = fully doped) and a trapped
//! fraction `q`. Conductance is linear in the free doping, the channel relaxes
//! toward an equilibrium set by the gate overpotential between the electrolyte
//! and the segment midpoint, and dedoping flux feeds a slowly released trap
//! population that accounts for drift and fatigue.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::cell::{SegmentRef, SimulationCell};
use crate::error::{Error, Result};
use crate::topology::DendriteSegment;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DeviceParams {
    /// Doped-state conductivity (S/cm).
    pub bulk_conductivity: f64,
    /// F/cm³.
    pub volumetric_capacitance: f64,
    /// Overpotential (V) that fully dedopes a segment.
    pub pinchoff_voltage: f64,
    /// s/cm³; multiplied by the segment volume gives the dedoping time constant.
    pub dedope_time_constant_per_volume: f64,
    pub redope_time_constant_per_volume: f64,
    pub residual_doping: f64,
    /// Trapped fraction created per unit of dedoped fraction.
    pub trap_rate: f64,
    /// 1/s.
    pub trap_release_rate: f64,
}

impl Default for DeviceParams {
    fn default() -> Self {
        DeviceParams {
            bulk_conductivity: 1.0,
            volumetric_capacitance: 39.0,
            pinchoff_voltage: 0.35,
            dedope_time_constant_per_volume: 6.0e8,
            redope_time_constant_per_volume: 1.8e9,
            residual_doping: 0.22,
            trap_rate: 0.016,
            trap_release_rate: 2.0e-4,
        }
    }
}

impl DeviceParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("bulk_conductivity", self.bulk_conductivity),
            ("volumetric_capacitance", self.volumetric_capacitance),
            ("pinchoff_voltage", self.pinchoff_voltage),
            ("dedope_time_constant_per_volume", self.dedope_time_constant_per_volume),
            ("redope_time_constant_per_volume", self.redope_time_constant_per_volume),
            ("residual_doping", self.residual_doping),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::domain(format!("device parameter {name} must be positive, got {v}")));
            }
        }
        if self.residual_doping >= 1.0 {
            return Err(Error::domain("residual_doping must be below 1"));
        }
        for (name, v) in [("trap_rate", self.trap_rate), ("trap_release_rate", self.trap_release_rate)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::domain(format!("device parameter {name} must be non-negative, got {v}")));
            }
        }
        Ok(())
    }

    /// Memoryless variant: no traps, and doping relaxes `factor` times faster.
    pub fn memoryless(&self, factor: f64) -> Self {
        DeviceParams {
            trap_rate: 0.0,
            dedope_time_constant_per_volume: self.dedope_time_constant_per_volume / factor,
            redope_time_constant_per_volume: self.dedope_time_constant_per_volume / factor,
            ..self.clone()
        }
    }

    pub fn max_trapped(&self) -> f64 {
        1.0 - self.residual_doping
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ElectrochemicalState {
    /// Per-segment doping fraction, in cell layout order.
    pub doping: Vec<f64>,
    pub trapped: Vec<f64>,
    pub electrolyte_potential: f64,
}

impl ElectrochemicalState {
    /// Fully doped, trap-free state.
    pub fn pristine(cell: &SimulationCell) -> Self {
        let n = cell.segment_count();
        ElectrochemicalState { doping: vec![1.0; n], trapped: vec![0.0; n], electrolyte_potential: 0.0 }
    }

    pub fn check(&self, cell: &SimulationCell) -> Result<()> {
        let n = cell.segment_count();
        if self.doping.len() != n || self.trapped.len() != n {
            return Err(Error::domain(format!(
                "state covers {} doping / {} trapped entries, cell has {n} segments",
                self.doping.len(),
                self.trapped.len()
            )));
        }
        let p = &cell.device;
        for (k, (&s, &q)) in self.doping.iter().zip(&self.trapped).enumerate() {
            let ok = s >= p.residual_doping - 1e-12
                && s <= 1.0 + 1e-12
                && q >= 0.0
                && q <= p.max_trapped() + 1e-12
                && s + q <= 1.0 + 1e-12;
            if !ok {
                return Err(Error::domain(format!("segment {k} state s={s}, q={q} out of range")));
            }
        }
        if !self.electrolyte_potential.is_finite() {
            return Err(Error::domain("electrolyte potential is not finite"));
        }
        Ok(())
    }
}

/// Conductance factor `max(s - q, s_res)`.
pub fn conducting_fraction(s: f64, q: f64, params: &DeviceParams) -> f64 {
    (s - q).max(params.residual_doping)
}

/// Conductance (S) of a segment in the given state.
pub fn segment_conductance(cell: &SimulationCell, segment: SegmentRef, state: &ElectrochemicalState) -> Result<f64> {
    let k = cell.segment_index(segment)?;
    let (s, q) = match (state.doping.get(k), state.trapped.get(k)) {
        (Some(&s), Some(&q)) => (s, q),
        _ => return Err(Error::UnknownSegment { topology: segment.topology, segment: segment.segment.0 }),
    };
    let site = &cell.layout().segments[k];
    Ok(cell.device.bulk_conductivity * site.shape_factor * conducting_fraction(s, q, &cell.device))
}

/// Fills `out` with every segment conductance, in layout order.
pub fn conductances_into(cell: &SimulationCell, state: &ElectrochemicalState, out: &mut Vec<f64>) {
    let p = &cell.device;
    out.clear();
    out.extend(
        cell.layout()
            .segments
            .iter()
            .zip(state.doping.iter().zip(&state.trapped))
            .map(|(site, (&s, &q))| p.bulk_conductivity * site.shape_factor * conducting_fraction(s, q, p)),
    );
}

/// `C_v · π r² L` in farads.
pub fn volumetric_capacitance_of(segment: &DendriteSegment, params: &DeviceParams) -> f64 {
    params.volumetric_capacitance * segment.volume_cm3()
}

/// Equilibrium doping for a gate overpotential `V_electrolyte - V_midpoint`.
pub fn equilibrium_doping(overpotential: f64, params: &DeviceParams) -> f64 {
    let s_res = params.residual_doping;
    (1.0 - (1.0 - s_res) * overpotential / params.pinchoff_voltage).clamp(s_res, 1.0)
}

/// Advances one segment by `dt` toward `s_eq`.
///
/// Doping relaxes exponentially with the dedope or redope time constant,
/// which is exact for a held overpotential. Traps grow with the dedoped
/// amount and decay at the release rate. The result is clamped back into the
/// admissible region.
pub fn relax_segment(s: f64, q: f64, s_eq: f64, volume_cm3: f64, dt: f64, p: &DeviceParams) -> (f64, f64) {
    let q_max = p.max_trapped();
    let target = s_eq.min(1.0 - q);
    let per_volume = if target < s { p.dedope_time_constant_per_volume } else { p.redope_time_constant_per_volume };
    let tau = per_volume * volume_cm3;
    let s_new = target + (s - target) * libm::exp(-dt / tau);
    let q_new = (q * libm::exp(-p.trap_release_rate * dt) + p.trap_rate * (s - s_new).max(0.0)).clamp(0.0, q_max);
    let s_new = s_new.clamp(p.residual_doping, 1.0 - q_new);
    (s_new, q_new)
}

/// Largest step the stability contract admits for this cell.
pub fn stable_step(cell: &SimulationCell) -> f64 {
    cell.min_time_constant() / 10.0
}

/// One doping/trap step for every segment of the cell.
///
/// Overpotentials use `state.electrolyte_potential` and the endpoint-average
/// potential of each segment.
pub fn step_doping(
    cell: &SimulationCell,
    state: &ElectrochemicalState,
    node_potentials: &[f64],
    dt: f64,
) -> Result<ElectrochemicalState> {
    let mut next = state.clone();
    step_doping_in_place(cell, &mut next, node_potentials, dt)?;
    Ok(next)
}

pub fn step_doping_in_place(
    cell: &SimulationCell,
    state: &mut ElectrochemicalState,
    node_potentials: &[f64],
    dt: f64,
) -> Result<()> {
    let limit = stable_step(cell);
    if !(dt > 0.0) || dt > limit * (1.0 + 1e-12) {
        return Err(Error::Stability { dt, limit });
    }
    if node_potentials.len() != cell.node_count() || state.doping.len() != cell.segment_count() {
        return Err(Error::domain("state or potentials do not match the cell"));
    }
    let p = &cell.device;
    let v_e = state.electrolyte_potential;
    for (k, site) in cell.layout().segments.iter().enumerate() {
        let v_mid = 0.5 * (node_potentials[site.nodes[0]] + node_potentials[site.nodes[1]]);
        let s_eq = equilibrium_doping(v_e - v_mid, p);
        let (s, q) = relax_segment(state.doping[k], state.trapped[k], s_eq, site.volume_cm3, dt, p);
        state.doping[k] = s;
        state.trapped[k] = q;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cell::assemble_cell;
    use crate::topology::{ElectrodeRole, ElectrodeSpec, NetworkTopology, NodeId, SegmentId};

    fn segment(length: f64, radius: f64) -> DendriteSegment {
        DendriteSegment {
            id: SegmentId(0),
            endpoints: [NodeId(0), NodeId(1)],
            length_um: length,
            radius_um: radius,
            growth_frequency_hz: 80.0,
            path: Vec::new(),
        }
    }

    fn bar_cell() -> SimulationCell {
        let mut t = NetworkTopology::from_electrodes(
            "bar",
            vec![
                ElectrodeSpec::new("S", 0.0, 0.0, ElectrodeRole::OutputSource),
                ElectrodeSpec::new("D", 200.0, 0.0, ElectrodeRole::OutputDrain),
            ],
        );
        t.add_straight_segment(NodeId(0), NodeId(1), 4.0, 80.0);
        assemble_cell(vec![t], 1e-9).unwrap()
    }

    #[test]
    fn conductance_identity_and_floor() {
        let cell = bar_cell();
        let r = SegmentRef { topology: 0, segment: SegmentId(0) };
        let mut st = ElectrochemicalState::pristine(&cell);
        let g0 = segment_conductance(&cell, r, &st).unwrap();
        let seg = &cell.topologies[0].segments[0];
        let expected = cell.device.bulk_conductivity * seg.shape_factor_cm();
        assert!((g0 - expected).abs() <= 1e-15 * expected);
        st.doping[0] = cell.device.residual_doping;
        let g = segment_conductance(&cell, r, &st).unwrap();
        assert!((g - cell.device.residual_doping * g0).abs() <= 1e-15 * g0);
        let missing = SegmentRef { topology: 0, segment: SegmentId(5) };
        assert!(matches!(segment_conductance(&cell, missing, &st), Err(Error::UnknownSegment { .. })));
    }

    #[test]
    fn capacitance_is_linear_in_length_and_favours_thick_fibres() {
        let p = DeviceParams::default();
        let c1 = volumetric_capacitance_of(&segment(100.0, 3.0), &p);
        let c2 = volumetric_capacitance_of(&segment(200.0, 3.0), &p);
        assert!((c2 - 2.0 * c1).abs() < 1e-12 * c2);
        let g = crate::topology::GrowthParams::default();
        let thick = crate::topology::radius_from_frequency(25.0, &g).unwrap();
        let thin = crate::topology::radius_from_frequency(200.0, &g).unwrap();
        assert!(
            volumetric_capacitance_of(&segment(100.0, thick), &p)
                > volumetric_capacitance_of(&segment(100.0, thin), &p)
        );
    }

    #[test]
    fn equilibrium_law_examples() {
        let p = DeviceParams::default();
        assert_eq!(equilibrium_doping(-0.3, &p), 1.0);
        assert_eq!(equilibrium_doping(0.0, &p), 1.0);
        assert!((equilibrium_doping(p.pinchoff_voltage, &p) - p.residual_doping).abs() < 1e-15);
        let half = equilibrium_doping(p.pinchoff_voltage / 2.0, &p);
        assert!((half - (1.0 + p.residual_doping) / 2.0).abs() < 1e-15);
        assert_eq!(equilibrium_doping(5.0, &p), p.residual_doping);
    }

    #[test]
    fn fixed_point_is_unchanged() {
        let p = DeviceParams { trap_rate: 0.01, trap_release_rate: 0.0, ..DeviceParams::default() };
        let (s, q) = relax_segment(0.6, 0.1, 0.6, 1e-9, 0.01, &p);
        assert_eq!((s, q), (0.6, 0.1));
    }

    #[test]
    fn held_overpotential_matches_closed_form() {
        let p = DeviceParams { trap_rate: 0.0, ..DeviceParams::default() };
        let v = 1e-9;
        let tau = p.dedope_time_constant_per_volume * v;
        let s_eq = 0.4;
        let dt = tau / 20.0;
        let mut s = 1.0;
        let mut t = 0.0;
        while t < 8.0 * tau {
            s = relax_segment(s, 0.0, s_eq, v, dt, &p).0;
            t += dt;
        }
        let exact = s_eq + (1.0 - s_eq) * libm::exp(-t / tau);
        assert!((s - exact).abs() < 1e-12);
        assert!((s - s_eq).abs() < 0.01 * s_eq);
    }

    #[test]
    fn stability_contract_is_enforced() {
        let cell = bar_cell();
        let st = ElectrochemicalState::pristine(&cell);
        let v = [0.0, 0.0];
        let limit = stable_step(&cell);
        assert!(step_doping(&cell, &st, &v, limit).is_ok());
        assert!(matches!(step_doping(&cell, &st, &v, 2.0 * limit), Err(Error::Stability { .. })));
        assert!(matches!(step_doping(&cell, &st, &v, 0.0), Err(Error::Stability { .. })));
    }

    #[test]
    fn invalid_params_are_rejected() {
        let p = DeviceParams { residual_doping: 1.0, ..DeviceParams::default() };
        assert!(p.validate().is_err());
        let p = DeviceParams { pinchoff_voltage: 0.0, ..DeviceParams::default() };
        assert!(p.validate().is_err());
    }
}
