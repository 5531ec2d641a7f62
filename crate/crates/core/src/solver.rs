//! Nodal analysis, electrolyte potential, DC operating points and transients.
//!
//! Every segment is a conductance set by its doping. Electrode nodes are
//! either held at a voltage or left floating; all other nodes obey Kirchhoff's
//! current law. The reduced Laplacian is symmetric positive definite whenever
//! each connected component touches a held electrode, so it is factored by
//! Cholesky and polished by iterative refinement until the nodal residual is
//! below `1e-12` of the largest terminal current.
//!
//! The electrolyte is one equipotential node whose potential is the
//! capacitance-weighted mean of segment midpoints and held electrodes.

use alloc::boxed::Box;
use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::ops::Range;

use serde::{Deserialize, Serialize};

use crate::cell::SimulationCell;
use crate::device::{conductances_into, equilibrium_doping, relax_segment, stable_step, ElectrochemicalState};
use crate::error::{Error, Result};
use crate::linalg::Spd;

/// Relative bound on the nodal current residual.
pub const KCL_TOLERANCE: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Terminal {
    Fixed(f64),
    Ground,
    Floating,
}

impl Terminal {
    pub fn voltage(self) -> Option<f64> {
        match self {
            Terminal::Fixed(v) => Some(v),
            Terminal::Ground => Some(0.0),
            Terminal::Floating => None,
        }
    }
}

/// Per-electrode terminal assignment. Electrodes not mentioned float.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BoundaryCondition {
    pub terminals: BTreeMap<String, Terminal>,
}

impl BoundaryCondition {
    pub fn new() -> Self {
        Self::default()
    }

    /// Every electrode of the cell grounded.
    pub fn all_grounded(cell: &SimulationCell) -> Self {
        let mut bc = Self::new();
        for id in cell.electrode_ids() {
            bc.set(id, Terminal::Ground);
        }
        bc
    }

    pub fn set(&mut self, id: &str, t: Terminal) -> &mut Self {
        self.terminals.insert(id.into(), t);
        self
    }

    pub fn with(mut self, id: &str, t: Terminal) -> Self {
        self.set(id, t);
        self
    }

    pub fn fixed(self, id: &str, v: f64) -> Self {
        self.with(id, Terminal::Fixed(v))
    }

    pub fn ground(self, id: &str) -> Self {
        self.with(id, Terminal::Ground)
    }

    pub fn get(&self, id: &str) -> Terminal {
        self.terminals.get(id).copied().unwrap_or(Terminal::Floating)
    }

    /// Every held voltage multiplied by `alpha`.
    pub fn scaled(&self, alpha: f64) -> Self {
        let terminals = self
            .terminals
            .iter()
            .map(|(k, t)| {
                let t = match *t {
                    Terminal::Fixed(v) => Terminal::Fixed(alpha * v),
                    other => other,
                };
                (k.clone(), t)
            })
            .collect();
        BoundaryCondition { terminals }
    }

    /// Terminal of every electrode in cell layout order.
    pub fn resolve(&self, cell: &SimulationCell) -> Result<Vec<Terminal>> {
        for (id, t) in &self.terminals {
            cell.electrode_index(id)?;
            if let Terminal::Fixed(v) = t {
                if !v.is_finite() {
                    return Err(Error::domain(format!("non-finite voltage on `{id}`")));
                }
            }
        }
        let resolved: Vec<Terminal> = cell.electrode_ids().map(|id| self.get(id)).collect();
        if resolved.iter().all(|t| t.voltage().is_none()) {
            return Err(Error::Singular { component: "whole cell (every electrode floating)".into() });
        }
        Ok(resolved)
    }
}

/// Node potentials and terminal currents of a frozen-doping network.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearSolution {
    pub node_potentials: Vec<f64>,
    /// Current injected into the network at each electrode, layout order (A).
    pub terminal_currents: Vec<f64>,
    /// Largest nodal current imbalance after refinement (A).
    pub kcl_residual: f64,
    /// Bound the residual was held to: `KCL_TOLERANCE` times the largest
    /// terminal current, or the rounding level of the potentials if larger (A).
    pub kcl_bound: f64,
    /// `|Σ terminal currents|` (A).
    pub conservation_error: f64,
}

impl LinearSolution {
    pub fn max_terminal_current(&self) -> f64 {
        self.terminal_currents.iter().fold(0.0, |m, i| m.max(i.abs()))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OperatingPoint {
    pub node_potentials: Vec<f64>,
    pub terminal_currents: Vec<f64>,
    pub state: ElectrochemicalState,
    pub iterations: usize,
    pub kcl_residual: f64,
}

impl OperatingPoint {
    pub fn current(&self, cell: &SimulationCell, electrode: &str) -> Result<f64> {
        Ok(self.terminal_currents[cell.electrode_index(electrode)?])
    }
}

/// Reusable buffers for repeated nodal solves on one cell.
#[derive(Clone, Debug, Default)]
pub struct NetworkSolver {
    conductance: Vec<f64>,
    fixed: Vec<Option<f64>>,
    unknown: Vec<usize>,
    unknown_nodes: Vec<usize>,
    lone: Vec<usize>,
    matrix: Spd,
    rhs: Vec<f64>,
    work: Vec<f64>,
}

const KNOWN: usize = usize::MAX;

impl NetworkSolver {
    pub fn new() -> Self {
        Self::default()
    }

    /// Solves for node potentials and terminal currents.
    ///
    /// Floating electrodes with no dendrite attached are placed at the
    /// electrolyte potential of `state`.
    pub fn solve(
        &mut self,
        cell: &SimulationCell,
        state: &ElectrochemicalState,
        terminals: &[Terminal],
    ) -> Result<LinearSolution> {
        let mut out = LinearSolution {
            node_potentials: vec![0.0; cell.node_count()],
            terminal_currents: vec![0.0; terminals.len()],
            kcl_residual: 0.0,
            kcl_bound: 0.0,
            conservation_error: 0.0,
        };
        self.solve_into(cell, state, terminals, &mut out)?;
        Ok(out)
    }

    pub fn solve_into(
        &mut self,
        cell: &SimulationCell,
        state: &ElectrochemicalState,
        terminals: &[Terminal],
        out: &mut LinearSolution,
    ) -> Result<()> {
        let layout = cell.layout();
        let n = cell.node_count();
        if state.doping.len() != cell.segment_count() || state.trapped.len() != cell.segment_count() {
            return Err(Error::domain("state does not cover every segment of the cell"));
        }
        conductances_into(cell, state, &mut self.conductance);
        let g = &self.conductance;
        let v = &mut out.node_potentials;
        v.clear();
        v.resize(n, 0.0);

        self.fixed.clear();
        self.fixed.resize(n, None);
        for (site, t) in layout.electrodes.iter().zip(terminals) {
            self.fixed[site.node] = t.voltage();
        }

        self.unknown.clear();
        self.unknown.resize(n, KNOWN);
        self.unknown_nodes.clear();
        self.lone.clear();
        for comp in &layout.components {
            let mut held = comp.iter().filter_map(|&i| self.fixed[i]);
            match held.next() {
                None => {
                    if comp.len() == 1 && layout.incidence[comp[0]].is_empty() {
                        self.lone.push(comp[0]);
                        continue;
                    }
                    return Err(Error::Singular { component: describe_component(cell, comp) });
                }
                Some(first) => {
                    if held.all(|x| x == first) {
                        for &i in comp {
                            v[i] = first;
                        }
                    } else {
                        for &i in comp {
                            match self.fixed[i] {
                                Some(x) => v[i] = x,
                                None => {
                                    self.unknown[i] = self.unknown_nodes.len();
                                    self.unknown_nodes.push(i);
                                }
                            }
                        }
                    }
                }
            }
        }
        for &i in &self.lone {
            v[i] = state.electrolyte_potential;
        }

        let m = self.unknown_nodes.len();
        if m > 0 {
            self.matrix.reset(m);
            self.rhs.clear();
            self.rhs.resize(m, 0.0);
            for (k, site) in layout.segments.iter().enumerate() {
                let [a, b] = site.nodes;
                let (ua, ub) = (self.unknown[a], self.unknown[b]);
                match (ua != KNOWN, ub != KNOWN) {
                    (true, true) => {
                        self.matrix.add(ua, ua, g[k]);
                        self.matrix.add(ub, ub, g[k]);
                        self.matrix.add(ua, ub, -g[k]);
                        self.matrix.add(ub, ua, -g[k]);
                    }
                    (true, false) => {
                        self.matrix.add(ua, ua, g[k]);
                        self.rhs[ua] += g[k] * v[b];
                    }
                    (false, true) => {
                        self.matrix.add(ub, ub, g[k]);
                        self.rhs[ub] += g[k] * v[a];
                    }
                    (false, false) => {}
                }
            }
            if let Err(pivot) = self.matrix.factor() {
                let node = self.unknown_nodes[pivot];
                let comp = layout.components.iter().find(|c| c.contains(&node)).unwrap();
                return Err(Error::Singular { component: describe_component(cell, comp) });
            }
            self.work.clear();
            self.work.extend_from_slice(&self.rhs);
            self.matrix.solve(&mut self.work);
            for (j, &i) in self.unknown_nodes.iter().enumerate() {
                v[i] = self.work[j];
            }
        }

        // Terminal currents and refinement of the interior residual. When the
        // terminal currents are tiny compared with the internal branch
        // currents, the residual bottoms out at the rounding level of the
        // potentials, so the bound never drops below that.
        let v_max = v.iter().fold(0.0_f64, |a, x| a.max(x.abs()));
        let g_max =
            (0..v.len()).map(|i| layout.incidence[i].iter().map(|&k| g[k]).sum::<f64>()).fold(0.0_f64, f64::max);
        let precision_floor = 64.0 * f64::EPSILON * g_max * v_max;
        let mut refinements = 0;
        loop {
            terminal_currents(cell, g, terminals, v, &mut out.terminal_currents);
            let i_max = out.terminal_currents.iter().fold(0.0_f64, |a, i| a.max(i.abs()));
            let bound = (KCL_TOLERANCE * i_max).max(precision_floor);
            let mut worst = 0.0_f64;
            self.work.clear();
            self.work.resize(m, 0.0);
            for (j, &i) in self.unknown_nodes.iter().enumerate() {
                let r = node_current(cell, g, v, i);
                self.work[j] = -r;
                worst = worst.max(r.abs());
            }
            // Floating electrodes must also balance.
            for (site, t) in layout.electrodes.iter().zip(terminals) {
                if t.voltage().is_none() && self.unknown[site.node] == KNOWN && !self.lone.contains(&site.node) {
                    worst = worst.max(node_current(cell, g, v, site.node).abs());
                }
            }
            out.kcl_residual = worst;
            out.kcl_bound = bound;
            if worst <= bound || m == 0 {
                if worst > bound {
                    return Err(Error::Residual { residual: worst, bound });
                }
                break;
            }
            if refinements == 4 {
                return Err(Error::Residual { residual: worst, bound });
            }
            self.matrix.solve(&mut self.work);
            for (j, &i) in self.unknown_nodes.iter().enumerate() {
                v[i] += self.work[j];
            }
            refinements += 1;
        }
        out.conservation_error = out.terminal_currents.iter().sum::<f64>().abs();
        Ok(())
    }
}

fn node_current(cell: &SimulationCell, g: &[f64], v: &[f64], node: usize) -> f64 {
    let layout = cell.layout();
    let mut sum = 0.0;
    for &k in &layout.incidence[node] {
        let [a, b] = layout.segments[k].nodes;
        let other = if a == node { b } else { a };
        sum += g[k] * (v[node] - v[other]);
    }
    sum
}

fn terminal_currents(cell: &SimulationCell, g: &[f64], terminals: &[Terminal], v: &[f64], out: &mut Vec<f64>) {
    out.clear();
    for (site, t) in cell.layout().electrodes.iter().zip(terminals) {
        out.push(match t.voltage() {
            Some(_) => node_current(cell, g, v, site.node),
            None => 0.0,
        });
    }
}

fn describe_component(cell: &SimulationCell, comp: &[usize]) -> String {
    let layout = cell.layout();
    let electrodes: Vec<&str> =
        comp.iter().filter_map(|&i| layout.node_electrode[i]).map(|e| layout.electrodes[e].id.as_str()).collect();
    let topology = layout
        .node_offsets
        .iter()
        .rposition(|&o| o <= comp[0])
        .map(|t| cell.topologies[t].name.as_str())
        .unwrap_or("?");
    if electrodes.is_empty() {
        format!("`{topology}` nodes {}", layout.node_labels[comp[0]])
    } else {
        format!("`{topology}` with floating electrodes [{}]", electrodes.join(", "))
    }
}

/// Node potentials and terminal currents with doping frozen at `state`.
pub fn solve_linear_network(
    cell: &SimulationCell,
    state: &ElectrochemicalState,
    bc: &BoundaryCondition,
) -> Result<LinearSolution> {
    let terminals = bc.resolve(cell)?;
    NetworkSolver::new().solve(cell, state, &terminals)
}

/// Capacitance-weighted electrolyte potential.
///
/// Segments contribute `w·C·V_mid`, held electrodes `C_dl·V`. Floating
/// electrodes carry no external current and so no double-layer charge.
pub fn electrolyte_potential(cell: &SimulationCell, node_potentials: &[f64], bc: &BoundaryCondition) -> Result<f64> {
    let terminals = bc.resolve(cell)?;
    Ok(electrolyte_potential_resolved(cell, node_potentials, &terminals))
}

pub fn electrolyte_potential_resolved(cell: &SimulationCell, v: &[f64], terminals: &[Terminal]) -> f64 {
    let layout = cell.layout();
    let mut num = 0.0;
    let mut den = 0.0;
    for s in &layout.segments {
        let c = s.coupling_weight * s.capacitance;
        num += c * 0.5 * (v[s.nodes[0]] + v[s.nodes[1]]);
        den += c;
    }
    let c_dl = cell.electrode_dl_capacitance;
    for t in terminals {
        if let Some(x) = t.voltage() {
            num += c_dl * x;
            den += c_dl;
        }
    }
    if den > 0.0 {
        let ve = num / den;
        // Guard the convex-combination property against rounding.
        let (lo, hi) = v.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
        ve.clamp(lo, hi)
    } else {
        0.0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DcOptions {
    pub damping: f64,
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for DcOptions {
    fn default() -> Self {
        DcOptions { damping: 0.5, tolerance: 1e-10, max_iterations: 200 }
    }
}

/// Self-consistent DC operating point from a fully doped start.
pub fn solve_dc(cell: &SimulationCell, bc: &BoundaryCondition) -> Result<OperatingPoint> {
    solve_dc_from(cell, bc, &ElectrochemicalState::pristine(cell), &DcOptions::default())
}

/// Damped fixed point of doping against its own gate overpotential.
///
/// Traps stay frozen at their values in `initial`. Converged when no
/// segment's equilibrium doping differs from its doping by more than the
/// tolerance; the returned state is the one the potentials were solved with.
pub fn solve_dc_from(
    cell: &SimulationCell,
    bc: &BoundaryCondition,
    initial: &ElectrochemicalState,
    options: &DcOptions,
) -> Result<OperatingPoint> {
    initial.check(cell)?;
    let terminals = bc.resolve(cell)?;
    let mut solver = NetworkSolver::new();
    let mut state = initial.clone();
    let mut sol = solver.solve(cell, &state, &terminals)?;
    let p = &cell.device;
    let mut residual = f64::INFINITY;
    for iteration in 1..=options.max_iterations {
        let ve = electrolyte_potential_resolved(cell, &sol.node_potentials, &terminals);
        state.electrolyte_potential = ve;
        residual = 0.0;
        let mut next = state.doping.clone();
        for (k, site) in cell.layout().segments.iter().enumerate() {
            let v_mid = 0.5 * (sol.node_potentials[site.nodes[0]] + sol.node_potentials[site.nodes[1]]);
            let s_eq = equilibrium_doping(ve - v_mid, p).min(1.0 - state.trapped[k]).max(p.residual_doping);
            let d = s_eq - state.doping[k];
            residual = residual.max(d.abs());
            next[k] = state.doping[k] + options.damping * d;
        }
        if residual < options.tolerance {
            return Ok(OperatingPoint {
                node_potentials: sol.node_potentials,
                terminal_currents: sol.terminal_currents,
                kcl_residual: sol.kcl_residual,
                state,
                iterations: iteration,
            });
        }
        state.doping = next;
        solver.solve_into(cell, &state, &terminals, &mut sol)?;
    }
    Err(Error::NonConvergence { iterations: options.max_iterations, residual })
}

/// One constant-drive interval of a waveform.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Phase {
    pub label: String,
    pub duration: f64,
    pub boundary: BoundaryCondition,
}

impl Phase {
    pub fn new(label: impl Into<String>, duration: f64, boundary: BoundaryCondition) -> Self {
        Phase { label: label.into(), duration, boundary }
    }
}

/// Piecewise-constant electrode drive.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DriveWaveform {
    pub phases: Vec<Phase>,
}

impl DriveWaveform {
    pub fn push(&mut self, phase: Phase) -> &mut Self {
        self.phases.push(phase);
        self
    }

    pub fn duration(&self) -> f64 {
        self.phases.iter().map(|p| p.duration).sum()
    }
}

/// Doping update scheme for transient integration.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    /// Equilibrium target taken at the start of the step.
    Euler,
    /// Equilibrium target re-evaluated at the half step. Second order.
    #[default]
    Midpoint,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TransientOptions {
    pub scheme: Scheme,
    pub record_potentials: bool,
    /// Doping snapshots every this many seconds, or never.
    pub snapshot_interval: Option<f64>,
}

impl Default for TransientOptions {
    fn default() -> Self {
        TransientOptions { scheme: Scheme::Midpoint, record_potentials: true, snapshot_interval: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DopingSnapshot {
    pub time: f64,
    pub doping: Vec<f64>,
    pub trapped: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseMark {
    pub label: String,
    pub start_time: f64,
    pub duration: f64,
    /// Index of the first sample of this phase.
    pub first_sample: usize,
}

/// Sampled transient response. Sample `k` is taken at `times[k]` with the
/// state at that instant and the drive of the phase starting there.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub electrode_ids: Vec<String>,
    pub node_labels: Vec<String>,
    pub times: Vec<f64>,
    pub electrolyte: Vec<f64>,
    /// Row-major, one row of terminal currents per sample.
    pub currents: Vec<f64>,
    /// Row-major node potentials, empty when not recorded.
    pub potentials: Vec<f64>,
    pub snapshots: Vec<DopingSnapshot>,
    pub phases: Vec<PhaseMark>,
}

impl Trace {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn electrode_column(&self, id: &str) -> Option<usize> {
        self.electrode_ids.iter().position(|e| e == id)
    }

    pub fn current(&self, sample: usize, column: usize) -> f64 {
        self.currents[sample * self.electrode_ids.len() + column]
    }

    pub fn current_row(&self, sample: usize) -> &[f64] {
        let w = self.electrode_ids.len();
        &self.currents[sample * w..(sample + 1) * w]
    }

    pub fn potential_row(&self, sample: usize) -> Option<&[f64]> {
        let w = self.node_labels.len();
        self.potentials.get(sample * w..(sample + 1) * w)
    }

    pub fn phase_samples(&self, phase: usize) -> Range<usize> {
        let start = self.phases[phase].first_sample;
        let end = self.phases.get(phase + 1).map_or(self.len(), |p| p.first_sample);
        start..end
    }

    /// Mean current of one electrode over a phase, skipping the leading
    /// `skip_fraction` of the phase duration.
    pub fn phase_mean_current(&self, phase: usize, column: usize, skip_fraction: f64) -> Option<f64> {
        let mark = &self.phases[phase];
        let cutoff = mark.start_time + skip_fraction * mark.duration;
        let (sum, n) = self
            .phase_samples(phase)
            .filter(|&k| self.times[k] >= cutoff - 1e-12 * mark.duration)
            .fold((0.0, 0usize), |(s, n), k| (s + self.current(k, column), n + 1));
        (n > 0).then(|| sum / n as f64)
    }
}

/// Stateful transient integrator. Phases may be appended one at a time so
/// protocols can pick a step per phase.
pub struct Integrator<'a> {
    cell: &'a SimulationCell,
    options: TransientOptions,
    solver: NetworkSolver,
    solution: LinearSolution,
    half: ElectrochemicalState,
    state: ElectrochemicalState,
    time: f64,
    next_snapshot: f64,
    trace: Trace,
    limit: f64,
}

impl<'a> Integrator<'a> {
    pub fn new(cell: &'a SimulationCell, initial: ElectrochemicalState, options: TransientOptions) -> Result<Self> {
        initial.check(cell)?;
        let trace = Trace {
            electrode_ids: cell.electrode_ids().map(ToString::to_string).collect(),
            node_labels: if options.record_potentials { cell.layout().node_labels.clone() } else { Vec::new() },
            ..Trace::default()
        };
        Ok(Integrator {
            cell,
            solution: LinearSolution {
                node_potentials: Vec::new(),
                terminal_currents: Vec::new(),
                kcl_residual: 0.0,
                kcl_bound: 0.0,
                conservation_error: 0.0,
            },
            half: initial.clone(),
            state: initial,
            time: 0.0,
            next_snapshot: 0.0,
            trace,
            limit: stable_step(cell),
            options,
            solver: NetworkSolver::new(),
        })
    }

    pub fn state(&self) -> &ElectrochemicalState {
        &self.state
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn trace(&self) -> &Trace {
        &self.trace
    }

    /// Largest step the stability contract admits.
    pub fn step_limit(&self) -> f64 {
        self.limit
    }

    /// Integrates one phase with steps no longer than `dt`. The phase is cut
    /// into equal steps so it ends exactly on its boundary.
    pub fn run_phase(&mut self, phase: &Phase, dt: f64) -> Result<()> {
        if !(phase.duration > 0.0 && phase.duration.is_finite()) {
            return Err(Error::domain(format!("phase `{}` has non-positive duration", phase.label)));
        }
        if !(dt > 0.0) || dt > self.limit * (1.0 + 1e-12) {
            return Err(Error::Stability { dt, limit: self.limit });
        }
        let terminals = phase.boundary.resolve(self.cell)?;
        let steps = libm::ceil(phase.duration / dt - 1e-9).max(1.0) as usize;
        let h = phase.duration / steps as f64;
        let start = self.time;
        self.trace.phases.push(PhaseMark {
            label: phase.label.clone(),
            start_time: start,
            duration: phase.duration,
            first_sample: self.trace.len(),
        });
        for i in 0..steps {
            let t = start + i as f64 * h;
            self.step(&terminals, h, t).map_err(|e| Error::Transient { time: t, source: Box::new(e) })?;
            self.time = start + (i + 1) as f64 * h;
        }
        self.time = start + phase.duration;
        Ok(())
    }

    fn step(&mut self, terminals: &[Terminal], h: f64, t: f64) -> Result<()> {
        let cell = self.cell;
        self.solver.solve_into(cell, &self.state, terminals, &mut self.solution)?;
        let ve = electrolyte_potential_resolved(cell, &self.solution.node_potentials, terminals);
        self.state.electrolyte_potential = ve;

        self.trace.times.push(t);
        self.trace.electrolyte.push(ve);
        self.trace.currents.extend_from_slice(&self.solution.terminal_currents);
        if self.options.record_potentials {
            self.trace.potentials.extend_from_slice(&self.solution.node_potentials);
        }
        if let Some(every) = self.options.snapshot_interval {
            if t >= self.next_snapshot - 1e-12 {
                self.trace.snapshots.push(DopingSnapshot {
                    time: t,
                    doping: self.state.doping.clone(),
                    trapped: self.state.trapped.clone(),
                });
                self.next_snapshot = t + every;
            }
        }

        match self.options.scheme {
            Scheme::Euler => {
                relax_all(cell, &mut self.state, &self.solution.node_potentials, ve, h);
            }
            Scheme::Midpoint => {
                self.half.clone_from(&self.state);
                relax_all(cell, &mut self.half, &self.solution.node_potentials, ve, 0.5 * h);
                self.solver.solve_into(cell, &self.half, terminals, &mut self.solution)?;
                let ve_half = electrolyte_potential_resolved(cell, &self.solution.node_potentials, terminals);
                relax_all(cell, &mut self.state, &self.solution.node_potentials, ve_half, h);
            }
        }
        Ok(())
    }

    pub fn finish(self) -> (Trace, ElectrochemicalState) {
        (self.trace, self.state)
    }
}

fn relax_all(cell: &SimulationCell, state: &mut ElectrochemicalState, v: &[f64], ve: f64, h: f64) {
    let p = &cell.device;
    for (k, site) in cell.layout().segments.iter().enumerate() {
        let v_mid = 0.5 * (v[site.nodes[0]] + v[site.nodes[1]]);
        let s_eq = equilibrium_doping(ve - v_mid, p);
        let (s, q) = relax_segment(state.doping[k], state.trapped[k], s_eq, site.volume_cm3, h, p);
        state.doping[k] = s;
        state.trapped[k] = q;
    }
    state.electrolyte_potential = ve;
}

/// Integrates a waveform from `initial` with steps no longer than `dt`.
pub fn run_transient(
    cell: &SimulationCell,
    waveform: &DriveWaveform,
    dt: f64,
    initial: &ElectrochemicalState,
) -> Result<(Trace, ElectrochemicalState)> {
    run_transient_with(cell, waveform, dt, initial, &TransientOptions::default())
}

pub fn run_transient_with(
    cell: &SimulationCell,
    waveform: &DriveWaveform,
    dt: f64,
    initial: &ElectrochemicalState,
    options: &TransientOptions,
) -> Result<(Trace, ElectrochemicalState)> {
    let mut integrator = Integrator::new(cell, initial.clone(), options.clone())?;
    for phase in &waveform.phases {
        integrator.run_phase(phase, dt)?;
    }
    Ok(integrator.finish())
}
