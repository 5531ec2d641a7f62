//! Experiments run against a [`SimulationCell`].
//!
//! - Quasi-static output sweeps, rectification coefficients and the
//!   per-configuration rectification table.
//! - Transfer families between two disconnected devices sharing the
//!   electrolyte.
//! - Pulsed multiply-accumulate with a biased readout dendrite.
//! - WRITE/READ/REST bit-pattern sequences.
//! - A repeated gate-stress protocol for fatigue.

use alloc::boxed::Box;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::cell::SimulationCell;
use crate::device::ElectrochemicalState;
use crate::error::{Error, Result};
use crate::rng::{derive_seed, Stream, STREAM_NOISE};
use crate::solver::{
    solve_dc_from, BoundaryCondition, DcOptions, Integrator, Phase, Terminal, Trace, TransientOptions,
};

/// Fraction of a window discarded as transient before averaging.
pub const SETTLE_FRACTION: f64 = 0.2;

// ---------------------------------------------------------------------------
// Sweeps and rectification
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    /// Electrodes shorted together and swept.
    pub swept: Vec<String>,
    /// Electrodes shorted to ground. Every other electrode floats.
    pub grounds: Vec<String>,
    pub start: f64,
    pub end: f64,
    pub step: f64,
    pub dc: DcOptions,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig::new(&[], &[], 0.9, 0.05)
    }
}

impl SweepConfig {
    pub fn new(swept: &[&str], grounds: &[&str], v_max: f64, step: f64) -> Self {
        SweepConfig {
            swept: swept.iter().map(|s| s.to_string()).collect(),
            grounds: grounds.iter().map(|s| s.to_string()).collect(),
            start: -v_max,
            end: v_max,
            step,
            dc: DcOptions::default(),
        }
    }

    /// Sweep voltages in ascending order.
    pub fn voltages(&self) -> Result<Vec<f64>> {
        if self.swept.is_empty() {
            return Err(Error::domain("sweep needs at least one swept electrode"));
        }
        if let Some(e) = self.swept.iter().find(|e| self.grounds.contains(e)) {
            return Err(Error::domain(format!("electrode `{e}` is both swept and grounded")));
        }
        voltage_grid(self.start, self.end, self.step)
    }
}

fn voltage_grid(start: f64, end: f64, step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0) || !start.is_finite() || !end.is_finite() {
        return Err(Error::domain("sweep step must be positive and bounds finite"));
    }
    let (lo, hi) = if start <= end { (start, end) } else { (end, start) };
    let n = (hi - lo) / step;
    let steps = libm::round(n);
    if (n - steps).abs() > 1e-9 * n.max(1.0) {
        return Err(Error::domain(format!("step {step} does not divide the range {lo}..{hi}")));
    }
    let steps = steps as usize;
    if steps == 0 {
        return Ok(vec![lo]);
    }
    let m = steps as f64;
    Ok((0..=steps).map(|k| lo * ((steps - k) as f64 / m) + hi * (k as f64 / m)).collect())
}

/// Sampled `I(V)` of the swept electrode group.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutputCurve {
    pub voltages: Vec<f64>,
    pub currents: Vec<f64>,
}

impl OutputCurve {
    pub fn current_at(&self, v: f64) -> Option<f64> {
        self.voltages.iter().position(|&x| (x - v).abs() <= 1e-9).map(|i| self.currents[i])
    }

    /// One-sided slope `dI/dV` at the sample nearest `v`, taken toward the
    /// curve interior.
    pub fn slope_at(&self, v: f64) -> Option<f64> {
        let n = self.voltages.len();
        if n < 2 {
            return None;
        }
        let i =
            (0..n).min_by(|&a, &b| (self.voltages[a] - v).abs().partial_cmp(&(self.voltages[b] - v).abs()).unwrap())?;
        let (a, b) = if i + 1 < n { (i, i + 1) } else { (i - 1, i) };
        let (a, b) = if i > 0 && i + 1 < n { (i - 1, i + 1) } else { (a, b) };
        Some((self.currents[b] - self.currents[a]) / (self.voltages[b] - self.voltages[a]))
    }
}

/// One DC solve per voltage, each from a fully doped start, so samples do
/// not depend on sweep direction.
pub fn run_output_sweep(cell: &SimulationCell, config: &SweepConfig) -> Result<OutputCurve> {
    let voltages = config.voltages()?;
    let idx: Vec<usize> = config.swept.iter().map(|e| cell.electrode_index(e)).collect::<Result<_>>()?;
    for g in &config.grounds {
        cell.electrode_index(g)?;
    }
    let pristine = ElectrochemicalState::pristine(cell);
    let mut currents = Vec::with_capacity(voltages.len());
    for &v in &voltages {
        let mut bc = BoundaryCondition::new();
        for e in &config.swept {
            bc.set(e, Terminal::Fixed(v));
        }
        for g in &config.grounds {
            bc.set(g, Terminal::Ground);
        }
        let op = solve_dc_from(cell, &bc, &pristine, &config.dc)
            .map_err(|e| Error::Sweep { voltage: v, source: Box::new(e) })?;
        currents.push(idx.iter().map(|&i| op.terminal_currents[i]).sum());
    }
    Ok(OutputCurve { voltages, currents })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Rectification {
    Finite(f64),
    /// Zero current at the negative endpoint with current at the positive one.
    Infinite,
}

impl Rectification {
    pub fn value(self) -> f64 {
        match self {
            Rectification::Finite(x) => x,
            Rectification::Infinite => f64::INFINITY,
        }
    }
}

impl fmt::Display for Rectification {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Rectification::Finite(x) => write!(f, "{x:.4}"),
            Rectification::Infinite => f.write_str("inf"),
        }
    }
}

/// `|I(+v_max)| / |I(-v_max)|`.
pub fn rectification_coefficient(curve: &OutputCurve, v_max: f64) -> Result<Rectification> {
    let pos = curve.current_at(v_max).ok_or_else(|| Error::domain(format!("curve has no sample at +{v_max} V")))?;
    let neg = curve.current_at(-v_max).ok_or_else(|| Error::domain(format!("curve has no sample at -{v_max} V")))?;
    if neg == 0.0 {
        return Ok(if pos == 0.0 { Rectification::Finite(1.0) } else { Rectification::Infinite });
    }
    Ok(Rectification::Finite(pos.abs() / neg.abs()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RectificationEntry {
    /// Grounds left of the hyphen, swept electrode right of it, e.g. `(1·2)-3`.
    pub label: String,
    pub swept: String,
    pub grounds: Vec<String>,
    pub coefficient: Rectification,
}

pub fn configuration_label(grounds: &[String], swept: &str) -> String {
    if grounds.len() == 1 {
        format!("{}-{swept}", grounds[0])
    } else {
        format!("({})-{swept}", grounds.join("·"))
    }
}

/// Rectification of every (swept electrode, non-empty ground set) pair of one
/// topology's electrodes. Electrodes in neither set float.
pub fn rectification_matrix(
    cell: &SimulationCell,
    topology: usize,
    v_max: f64,
    step: f64,
) -> Result<Vec<RectificationEntry>> {
    let ids: Vec<String> = cell.topology_electrodes(topology).into_iter().map(String::from).collect();
    if ids.len() < 3 {
        return Err(Error::domain("rectification table needs at least three electrodes"));
    }
    let mut table = Vec::new();
    for swept in &ids {
        let others: Vec<&String> = ids.iter().filter(|e| *e != swept).collect();
        for mask in 1u32..(1 << others.len()) {
            let grounds: Vec<String> =
                others.iter().enumerate().filter(|(i, _)| mask & (1 << i) != 0).map(|(_, e)| (*e).clone()).collect();
            let config = SweepConfig {
                swept: vec![swept.clone()],
                grounds: grounds.clone(),
                start: -v_max,
                end: v_max,
                step,
                dc: DcOptions::default(),
            };
            let curve = run_output_sweep(cell, &config)?;
            table.push(RectificationEntry {
                label: configuration_label(&grounds, swept),
                swept: swept.clone(),
                coefficient: rectification_coefficient(&curve, v_max)?,
                grounds,
            });
        }
    }
    Ok(table)
}

// ---------------------------------------------------------------------------
// Inter-gating
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TransferConfig {
    /// Biased terminal of the gating device; its other terminals float.
    pub gate: String,
    pub source: String,
    pub drain: String,
    pub gate_biases: Vec<f64>,
    pub drain_start: f64,
    pub drain_end: f64,
    pub drain_step: f64,
    pub dc: DcOptions,
}

impl Default for TransferConfig {
    fn default() -> Self {
        TransferConfig::new("", "", "")
    }
}

impl TransferConfig {
    pub fn new(gate: &str, source: &str, drain: &str) -> Self {
        TransferConfig {
            gate: gate.into(),
            source: source.into(),
            drain: drain.into(),
            gate_biases: vec![0.0, 0.3, 0.6, 0.9],
            drain_start: 0.0,
            drain_end: 0.9,
            drain_step: 0.1,
            dc: DcOptions::default(),
        }
    }
}

/// Drain current of the channel device, one output curve per gate bias.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransferFamily {
    pub gate_biases: Vec<f64>,
    pub drain_voltages: Vec<f64>,
    /// `drain_currents[g][d]`.
    pub drain_currents: Vec<Vec<f64>>,
}

impl TransferFamily {
    /// Drain current against gate bias at one drain voltage.
    pub fn transfer_curve(&self, drain_index: usize) -> Vec<f64> {
        self.drain_currents.iter().map(|row| row[drain_index]).collect()
    }

    /// `1 - |I(max gate)| / |I(zero gate)|` at the largest drain voltage.
    pub fn suppression(&self) -> Result<f64> {
        let d = self.drain_voltages.len().checked_sub(1).ok_or_else(|| Error::domain("empty family"))?;
        let zero = self
            .gate_biases
            .iter()
            .position(|&g| g == 0.0)
            .ok_or_else(|| Error::domain("family has no zero gate bias"))?;
        let max = (0..self.gate_biases.len())
            .max_by(|&a, &b| self.gate_biases[a].partial_cmp(&self.gate_biases[b]).unwrap())
            .unwrap();
        let i0 = self.drain_currents[zero][d].abs();
        if i0 == 0.0 {
            return Err(Error::domain("zero drain current at zero gate bias"));
        }
        Ok(1.0 - self.drain_currents[max][d].abs() / i0)
    }
}

pub fn run_transfer_sweep(cell: &SimulationCell, config: &TransferConfig) -> Result<TransferFamily> {
    let drain_voltages = voltage_grid(config.drain_start, config.drain_end, config.drain_step)?;
    let gate_idx = cell.electrode_index(&config.gate)?;
    let source_idx = cell.electrode_index(&config.source)?;
    let drain_idx = cell.electrode_index(&config.drain)?;
    let layout = cell.layout();
    if layout.electrodes[gate_idx].topology == layout.electrodes[source_idx].topology
        || layout.electrodes[source_idx].topology != layout.electrodes[drain_idx].topology
    {
        return Err(Error::domain("gate and channel must be disjoint devices"));
    }
    let pristine = ElectrochemicalState::pristine(cell);
    let mut drain_currents = Vec::with_capacity(config.gate_biases.len());
    for &vg in &config.gate_biases {
        let mut row = Vec::with_capacity(drain_voltages.len());
        for &vd in &drain_voltages {
            let bc = BoundaryCondition::new().fixed(&config.gate, vg).ground(&config.source).fixed(&config.drain, vd);
            let op = solve_dc_from(cell, &bc, &pristine, &config.dc)
                .map_err(|e| Error::Sweep { voltage: vd, source: Box::new(e) })?;
            row.push(op.terminal_currents[drain_idx]);
        }
        drain_currents.push(row);
    }
    Ok(TransferFamily { gate_biases: config.gate_biases.clone(), drain_voltages, drain_currents })
}

// ---------------------------------------------------------------------------
// Multiply-accumulate
// ---------------------------------------------------------------------------

/// Treatment of electrodes that are not being driven.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IdleTerminals {
    #[default]
    Ground,
    Float,
}

impl IdleTerminals {
    fn terminal(self) -> Terminal {
        match self {
            IdleTerminals::Ground => Terminal::Ground,
            IdleTerminals::Float => Terminal::Floating,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MacConfig {
    pub inputs: Vec<String>,
    pub readout_source: String,
    pub readout_drain: String,
    pub pulse_amplitude: f64,
    pub pulse_duration: f64,
    /// Rest between pulses, in pulse durations.
    pub rest_factor: f64,
    pub read_bias: f64,
    /// Input subsets fired in order, as indices into `inputs`. Empty means
    /// every non-empty subset by size, then lexicographically.
    pub schedule: Vec<Vec<usize>>,
    /// Inputs outside the firing subset. Every other electrode is grounded.
    pub idle: IdleTerminals,
    /// Upper bound on the integration step (s).
    pub max_step: f64,
}

impl Default for MacConfig {
    fn default() -> Self {
        MacConfig::new(&[], "S", "D")
    }
}

impl MacConfig {
    pub fn new(inputs: &[&str], readout_source: &str, readout_drain: &str) -> Self {
        MacConfig {
            inputs: inputs.iter().map(|s| s.to_string()).collect(),
            readout_source: readout_source.into(),
            readout_drain: readout_drain.into(),
            pulse_amplitude: 0.6,
            pulse_duration: 0.2,
            rest_factor: 5.0,
            read_bias: 0.1,
            schedule: Vec::new(),
            idle: IdleTerminals::Float,
            max_step: 0.01,
        }
    }

    pub fn resolved_schedule(&self) -> Vec<Vec<usize>> {
        if !self.schedule.is_empty() {
            return self.schedule.clone();
        }
        let n = self.inputs.len();
        let mut subsets: Vec<Vec<usize>> =
            (1u32..(1 << n)).map(|m| (0..n).filter(|i| m & (1 << i) != 0).collect()).collect();
        subsets.sort_by(|a, b| a.len().cmp(&b.len()).then_with(|| a.cmp(b)));
        subsets
    }

    fn validate(&self, cell: &SimulationCell) -> Result<()> {
        for e in self.inputs.iter().chain([&self.readout_source, &self.readout_drain]) {
            cell.electrode_index(e)?;
        }
        if self.inputs.contains(&self.readout_source) || self.inputs.contains(&self.readout_drain) {
            return Err(Error::domain("MAC inputs and readout must be disjoint"));
        }
        if !(self.pulse_duration > 0.0 && self.rest_factor > 0.0 && self.max_step > 0.0) {
            return Err(Error::domain("MAC durations must be positive"));
        }
        for s in &self.schedule {
            if s.iter().any(|&i| i >= self.inputs.len()) {
                return Err(Error::domain("MAC schedule references a missing input"));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MacEntry {
    pub subset: Vec<usize>,
    pub label: String,
    /// Signed steady-pulse `ΔI/I` of the readout.
    pub delta_i_over_i: f64,
    /// `|ΔI/I|`.
    pub modulation: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MacResult {
    pub trace: Trace,
    pub entries: Vec<MacEntry>,
}

impl MacResult {
    pub fn modulation_of(&self, subset: &[usize]) -> Option<f64> {
        self.entries.iter().find(|e| e.subset == subset).map(|e| e.modulation)
    }
}

/// Fires each scheduled subset as a pulse followed by a rest, with the
/// readout biased throughout. Each subset's modulation compares the steady
/// part of its pulse with the end of the preceding rest.
pub fn run_mac(cell: &SimulationCell, config: &MacConfig) -> Result<MacResult> {
    config.validate(cell)?;
    let schedule = config.resolved_schedule();
    let rest = config.rest_factor * config.pulse_duration;
    let readout = cell.electrode_index(&config.readout_source)?;

    let boundary = |active: &[usize]| {
        let mut bc = BoundaryCondition::all_grounded(cell);
        bc.set(&config.readout_source, Terminal::Fixed(config.read_bias));
        bc.set(&config.readout_drain, Terminal::Ground);
        for (i, id) in config.inputs.iter().enumerate() {
            let t = if active.contains(&i) { Terminal::Fixed(config.pulse_amplitude) } else { config.idle.terminal() };
            bc.set(id, t);
        }
        bc
    };

    let options = TransientOptions { record_potentials: false, ..TransientOptions::default() };
    let mut integrator = Integrator::new(cell, ElectrochemicalState::pristine(cell), options)?;
    let dt = |duration: f64, limit: f64| limit.min(config.max_step).min(duration / 10.0);
    let limit = integrator.step_limit();
    integrator.run_phase(&Phase::new("settle", rest, boundary(&[])), dt(rest, limit))?;

    let mut entries = Vec::with_capacity(schedule.len());
    for subset in &schedule {
        let before = integrator.trace().phases.len() - 1;
        integrator.run_phase(
            &Phase::new(subset_label(config, subset), config.pulse_duration, boundary(subset)),
            dt(config.pulse_duration, limit),
        )?;
        let pulse = before + 1;
        integrator.run_phase(&Phase::new("rest", rest, boundary(&[])), dt(rest, limit))?;
        let trace = integrator.trace();
        let base = tail_mean(trace, before, readout, SETTLE_FRACTION)
            .ok_or_else(|| Error::IncompleteTrace("empty MAC rest window".into()))?;
        let on = trace
            .phase_mean_current(pulse, readout, SETTLE_FRACTION)
            .ok_or_else(|| Error::IncompleteTrace("empty MAC pulse window".into()))?;
        let d = delta_i_over_i(on, base)?;
        entries.push(MacEntry {
            subset: subset.clone(),
            label: subset_label(config, subset),
            delta_i_over_i: d,
            modulation: d.abs(),
        });
    }
    let (trace, _) = integrator.finish();
    Ok(MacResult { trace, entries })
}

fn subset_label(config: &MacConfig, subset: &[usize]) -> String {
    if subset.is_empty() {
        return "none".into();
    }
    subset.iter().map(|&i| config.inputs[i].as_str()).collect::<Vec<_>>().join("+")
}

/// Mean over the last `fraction` of a phase.
fn tail_mean(trace: &Trace, phase: usize, column: usize, fraction: f64) -> Option<f64> {
    let mark = &trace.phases[phase];
    let cutoff = mark.start_time + (1.0 - fraction) * mark.duration;
    let (sum, n) = trace
        .phase_samples(phase)
        .filter(|&k| trace.times[k] >= cutoff - 1e-12)
        .fold((0.0, 0usize), |(s, n), k| (s + trace.current(k, column), n + 1));
    (n > 0).then(|| sum / n as f64)
}

// ---------------------------------------------------------------------------
// Bit-pattern sequences
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct BitPattern {
    pub bits: Vec<bool>,
}

impl BitPattern {
    pub fn new(bits: Vec<bool>) -> Self {
        BitPattern { bits }
    }

    /// The eight 3-bit patterns in the default presentation order.
    pub fn default_order() -> Vec<BitPattern> {
        ["111", "000", "110", "011", "101", "100", "010", "001"].iter().map(|s| s.parse().unwrap()).collect()
    }
}

impl fmt::Display for BitPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for &b in &self.bits {
            f.write_str(if b { "1" } else { "0" })?;
        }
        Ok(())
    }
}

impl FromStr for BitPattern {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bits = s
            .chars()
            .map(|c| match c {
                '0' => Ok(false),
                '1' => Ok(true),
                other => Err(Error::domain(format!("invalid bit `{other}` in pattern `{s}`"))),
            })
            .collect::<Result<Vec<_>>>()?;
        if bits.is_empty() {
            return Err(Error::domain("empty bit pattern"));
        }
        Ok(BitPattern { bits })
    }
}

impl Serialize for BitPattern {
    fn serialize<S: serde::Serializer>(&self, s: S) -> core::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for BitPattern {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> core::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SequenceProgram {
    pub input_electrodes: Vec<String>,
    pub patterns: Vec<BitPattern>,
    pub write_duration: f64,
    pub read_duration: f64,
    pub rest_duration: f64,
    pub high_voltage: f64,
    pub low_voltage: f64,
    pub read_bias: f64,
    pub cycles: usize,
    /// Unrecorded cycles run first to condition the device.
    pub warmup_cycles: usize,
    pub readout_source: String,
    pub readout_drain: String,
    /// Electrodes that are neither inputs nor readout.
    pub idle: IdleTerminals,
    /// Readout terminals while a pattern is written.
    pub write_readout: IdleTerminals,
    /// Relative standard deviation of each current measurement.
    pub read_noise: f64,
    pub noise_seed: u64,
    /// Upper bound on the integration step (s).
    pub max_step: f64,
}

impl Default for SequenceProgram {
    fn default() -> Self {
        SequenceProgram {
            input_electrodes: vec!["A".into(), "B".into(), "C".into()],
            patterns: BitPattern::default_order(),
            write_duration: 10.0,
            read_duration: 0.05,
            rest_duration: 10.0,
            high_voltage: 0.6,
            low_voltage: -0.6,
            read_bias: 0.1,
            cycles: 5,
            warmup_cycles: 1,
            readout_source: "S".into(),
            readout_drain: "D".into(),
            idle: IdleTerminals::Ground,
            write_readout: IdleTerminals::Float,
            read_noise: 0.0,
            noise_seed: 0,
            max_step: 0.5,
        }
    }
}

impl SequenceProgram {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("write_duration", self.write_duration),
            ("read_duration", self.read_duration),
            ("rest_duration", self.rest_duration),
            ("max_step", self.max_step),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::domain(format!("{name} must be positive, got {v}")));
            }
        }
        if self.cycles == 0 {
            return Err(Error::domain("cycles must be at least 1"));
        }
        if !(self.high_voltage >= 0.0 && self.low_voltage <= 0.0) {
            return Err(Error::domain("high voltage must be >= 0 and low voltage <= 0"));
        }
        if self.patterns.is_empty() {
            return Err(Error::domain("program has no patterns"));
        }
        if !(self.read_noise >= 0.0 && self.read_noise.is_finite()) {
            return Err(Error::domain("read_noise must be non-negative"));
        }
        for p in &self.patterns {
            if p.bits.len() != self.input_electrodes.len() {
                return Err(Error::domain(format!(
                    "pattern {p} has {} bits for {} input electrodes",
                    p.bits.len(),
                    self.input_electrodes.len()
                )));
            }
        }
        let readout = [&self.readout_source, &self.readout_drain];
        if self.input_electrodes.iter().any(|e| readout.contains(&e)) {
            return Err(Error::domain("inputs and readout must be disjoint"));
        }
        Ok(())
    }

    pub fn pattern_labels(&self) -> Vec<String> {
        self.patterns.iter().map(ToString::to_string).collect()
    }
}

/// Voltage on each input electrode for one pattern, in input order.
pub fn encode_pattern(pattern: &BitPattern, program: &SequenceProgram) -> Result<Vec<(String, f64)>> {
    if pattern.bits.len() != program.input_electrodes.len() {
        return Err(Error::domain(format!(
            "pattern {pattern} has {} bits for {} input electrodes",
            pattern.bits.len(),
            program.input_electrodes.len()
        )));
    }
    Ok(program
        .input_electrodes
        .iter()
        .zip(&pattern.bits)
        .map(|(e, &b)| (e.clone(), if b { program.high_voltage } else { program.low_voltage }))
        .collect())
}

/// `(I_READ - I_REST) / I_REST`.
pub fn delta_i_over_i(i_read: f64, i_rest: f64) -> Result<f64> {
    if i_rest == 0.0 || !i_rest.is_finite() {
        return Err(Error::domain("I_REST must be non-zero and finite"));
    }
    Ok((i_read - i_rest) / i_rest)
}

/// One READ window and the REST probe that preceded its WRITE.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SequenceStep {
    pub cycle: usize,
    pub pattern: usize,
    pub i_read: Option<f64>,
    pub i_rest_before: Option<f64>,
    /// Index into [`SequenceTrace::probes`] of the preceding REST probe.
    pub probe: usize,
    /// Noise-free simulated READ current.
    pub clean_read: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Probe {
    pub time: f64,
    pub clean: f64,
    pub measured: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SequenceTrace {
    pub patterns: Vec<String>,
    pub cycles: usize,
    pub steps: Vec<SequenceStep>,
    /// REST probes in time order, the pre-sequence probe first.
    pub probes: Vec<Probe>,
    pub trace: Trace,
    pub final_state: ElectrochemicalState,
}

impl SequenceTrace {
    /// Same run measured with fresh read noise. Equivalent to replicate 0.
    pub fn remeasured(&self, relative_std: f64, seed: u64) -> Self {
        self.replicate(relative_std, seed, 0)
    }

    /// Replicate `r` of the measurement, drawing from noise stream
    /// `STREAM_NOISE + r` of `seed`.
    pub fn replicate(&self, relative_std: f64, seed: u64, r: u64) -> Self {
        let mut out = self.clone();
        let mut noise = Stream::new(derive_seed(seed, STREAM_NOISE + r));
        let mut draw = |x: f64| x * (1.0 + relative_std * noise.normal());
        // Chronological order: probe before each step's READ.
        let mut next_probe = 0;
        for step in &mut out.steps {
            while next_probe <= step.probe {
                out.probes[next_probe].measured = draw(out.probes[next_probe].clean);
                next_probe += 1;
            }
            step.i_read = Some(draw(step.clean_read));
        }
        while next_probe < out.probes.len() {
            out.probes[next_probe].measured = draw(out.probes[next_probe].clean);
            next_probe += 1;
        }
        for step in &mut out.steps {
            step.i_rest_before = Some(out.probes[step.probe].measured);
        }
        out
    }

    /// Mean measured REST probe current of each recorded cycle.
    pub fn baseline_per_cycle(&self) -> Vec<f64> {
        (0..self.cycles)
            .map(|c| {
                let probes: Vec<f64> =
                    self.steps.iter().filter(|s| s.cycle == c).filter_map(|s| s.i_rest_before).collect();
                probes.iter().sum::<f64>() / probes.len().max(1) as f64
            })
            .collect()
    }
}

/// Runs the WRITE/READ/REST program.
///
/// The run opens with a REST and a probe read. Each pattern is then written,
/// read, and followed by a REST that ends with a probe read; that probe is
/// the `I_REST` of the next pattern. READ currents average the window after
/// its first fifth. Probe reads use the READ drive.
pub fn run_sequence(cell: &SimulationCell, program: &SequenceProgram) -> Result<SequenceTrace> {
    run_sequence_from(cell, program, ElectrochemicalState::pristine(cell))
}

pub fn run_sequence_from(
    cell: &SimulationCell,
    program: &SequenceProgram,
    initial: ElectrochemicalState,
) -> Result<SequenceTrace> {
    program.validate()?;
    for e in program.input_electrodes.iter().chain([&program.readout_source, &program.readout_drain]) {
        cell.electrode_index(e)?;
    }
    let readout = cell.electrode_index(&program.readout_source)?;
    let idle = program.idle.terminal();

    let base = |cell: &SimulationCell| {
        let mut bc = BoundaryCondition::new();
        for id in cell.electrode_ids() {
            bc.set(id, idle);
        }
        bc
    };
    let mut read_bc = base(cell);
    for e in &program.input_electrodes {
        read_bc.set(e, Terminal::Ground);
    }
    read_bc.set(&program.readout_source, Terminal::Fixed(program.read_bias));
    read_bc.set(&program.readout_drain, Terminal::Ground);
    let rest_bc = BoundaryCondition::all_grounded(cell);
    let mut write_bcs = Vec::with_capacity(program.patterns.len());
    for p in &program.patterns {
        let mut bc = base(cell);
        for (e, v) in encode_pattern(p, program)? {
            bc.set(&e, Terminal::Fixed(v));
        }
        bc.set(&program.readout_source, program.write_readout.terminal());
        bc.set(&program.readout_drain, program.write_readout.terminal());
        write_bcs.push(bc);
    }

    let options = TransientOptions { record_potentials: false, ..TransientOptions::default() };
    let mut integ = Integrator::new(cell, initial, options)?;
    let limit = integ.step_limit();
    let dt = |d: f64| limit.min(program.max_step).min(d / 10.0);

    let labels = program.pattern_labels();
    let mut probes = Vec::new();
    let mut steps = Vec::new();

    let probe = |integ: &mut Integrator, probes: &mut Vec<Probe>| -> Result<()> {
        integ.run_phase(&Phase::new("rest", program.rest_duration, rest_bc.clone()), dt(program.rest_duration))?;
        integ.run_phase(&Phase::new("probe", program.read_duration, read_bc.clone()), dt(program.read_duration))?;
        let phase = integ.trace().phases.len() - 1;
        let clean = integ
            .trace()
            .phase_mean_current(phase, readout, SETTLE_FRACTION)
            .ok_or_else(|| Error::IncompleteTrace("empty probe window".into()))?;
        probes.push(Probe { time: integ.time(), clean, measured: clean });
        Ok(())
    };

    probe(&mut integ, &mut probes)?;
    for cycle in 0..program.warmup_cycles + program.cycles {
        for (j, bc) in write_bcs.iter().enumerate() {
            let before = probes.len() - 1;
            integ.run_phase(
                &Phase::new(format!("write {}", labels[j]), program.write_duration, bc.clone()),
                dt(program.write_duration),
            )?;
            integ.run_phase(
                &Phase::new(format!("read {}", labels[j]), program.read_duration, read_bc.clone()),
                dt(program.read_duration),
            )?;
            let phase = integ.trace().phases.len() - 1;
            let clean_read = integ
                .trace()
                .phase_mean_current(phase, readout, SETTLE_FRACTION)
                .ok_or_else(|| Error::IncompleteTrace("empty read window".into()))?;
            probe(&mut integ, &mut probes)?;
            if cycle >= program.warmup_cycles {
                steps.push(SequenceStep {
                    cycle: cycle - program.warmup_cycles,
                    pattern: j,
                    i_read: Some(clean_read),
                    i_rest_before: Some(probes[before].clean),
                    probe: before,
                    clean_read,
                });
            }
        }
    }
    let (trace, final_state) = integ.finish();
    let out = SequenceTrace { patterns: labels, cycles: program.cycles, steps, probes, trace, final_state };
    Ok(out.remeasured(program.read_noise, program.noise_seed))
}

// ---------------------------------------------------------------------------
// Fatigue
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FatigueConfig {
    /// Electrode pulsed to stress the channel through the electrolyte.
    pub gate: String,
    pub source: String,
    pub drain: String,
    pub gate_voltage: f64,
    pub read_bias: f64,
    pub pulses: usize,
    pub pulse_on: f64,
    pub pulse_off: f64,
    /// Grounded settling before each conductance measurement (s).
    pub recovery: f64,
    pub read_duration: f64,
    pub max_step: f64,
}

impl Default for FatigueConfig {
    fn default() -> Self {
        FatigueConfig {
            gate: "T1".into(),
            source: "K1".into(),
            drain: "K2".into(),
            gate_voltage: 0.9,
            read_bias: 0.1,
            pulses: 25,
            pulse_on: 1.0,
            pulse_off: 1.0,
            recovery: 10.0,
            read_duration: 0.05,
            max_step: 0.05,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FatigueResult {
    pub conductance_before: f64,
    pub conductance_after: f64,
    /// `1 - after / before`.
    pub reduction: f64,
}

/// Measures channel conductance, applies repeated gate pulses, lets the
/// doping recover, and measures again. The remaining loss is trapped charge.
pub fn run_fatigue(cell: &SimulationCell, config: &FatigueConfig) -> Result<FatigueResult> {
    for e in [&config.gate, &config.source, &config.drain] {
        cell.electrode_index(e)?;
    }
    if config.read_bias == 0.0 {
        return Err(Error::domain("read bias must be non-zero"));
    }
    let source = cell.electrode_index(&config.source)?;
    let grounded = BoundaryCondition::all_grounded(cell);
    let read = grounded.clone().fixed(&config.source, config.read_bias);
    let stress = grounded.clone().fixed(&config.gate, config.gate_voltage);

    let options = TransientOptions { record_potentials: false, ..TransientOptions::default() };
    let mut integ = Integrator::new(cell, ElectrochemicalState::pristine(cell), options)?;
    let limit = integ.step_limit();
    let dt = |d: f64| limit.min(config.max_step).min(d / 10.0);

    let measure = |integ: &mut Integrator| -> Result<f64> {
        integ.run_phase(&Phase::new("recover", config.recovery, grounded.clone()), dt(config.recovery))?;
        integ.run_phase(&Phase::new("measure", config.read_duration, read.clone()), dt(config.read_duration))?;
        let phase = integ.trace().phases.len() - 1;
        integ
            .trace()
            .phase_mean_current(phase, source, SETTLE_FRACTION)
            .map(|i| i / config.read_bias)
            .ok_or_else(|| Error::IncompleteTrace("empty measurement window".into()))
    };

    let before = measure(&mut integ)?;
    for _ in 0..config.pulses {
        integ.run_phase(&Phase::new("stress", config.pulse_on, stress.clone()), dt(config.pulse_on))?;
        integ.run_phase(&Phase::new("relax", config.pulse_off, grounded.clone()), dt(config.pulse_off))?;
    }
    let after = measure(&mut integ)?;
    Ok(FatigueResult { conductance_before: before, conductance_after: after, reduction: 1.0 - after / before })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_hits_symmetric_endpoints_and_zero() {
        let v = voltage_grid(-0.9, 0.9, 0.05).unwrap();
        assert_eq!(v.len(), 37);
        assert_eq!(v[0], -0.9);
        assert_eq!(v[36], 0.9);
        assert_eq!(v[18], 0.0);
        assert_eq!(voltage_grid(0.9, -0.9, 0.05).unwrap(), v);
        assert!(voltage_grid(0.0, 1.0, 0.3).is_err());
    }

    #[test]
    fn rectification_examples() {
        let v = vec![-0.9, 0.0, 0.9];
        let curve = OutputCurve { voltages: v.clone(), currents: vec![-1.0, 0.0, 4.4] };
        assert!((rectification_coefficient(&curve, 0.9).unwrap().value() - 4.4).abs() < 1e-12);
        let odd = OutputCurve { voltages: v.clone(), currents: vec![-2.0, 0.0, 2.0] };
        assert_eq!(rectification_coefficient(&odd, 0.9).unwrap(), Rectification::Finite(1.0));
        let zero_pos = OutputCurve { voltages: v.clone(), currents: vec![-2.0, 0.0, 0.0] };
        assert_eq!(rectification_coefficient(&zero_pos, 0.9).unwrap(), Rectification::Finite(0.0));
        let zero_neg = OutputCurve { voltages: v.clone(), currents: vec![0.0, 0.0, 1.0] };
        assert_eq!(rectification_coefficient(&zero_neg, 0.9).unwrap(), Rectification::Infinite);
        assert!(rectification_coefficient(&curve, 0.5).is_err());
    }

    #[test]
    fn labels_follow_ground_hyphen_swept() {
        assert_eq!(configuration_label(&["1".into(), "2".into()], "3"), "(1·2)-3");
        assert_eq!(configuration_label(&["4".into()], "1"), "4-1");
    }

    #[test]
    fn delta_i_examples() {
        assert_eq!(delta_i_over_i(2.0, 2.0).unwrap(), 0.0);
        assert!((delta_i_over_i(1.10, 1.0).unwrap() - 0.10).abs() < 1e-15);
        assert!((delta_i_over_i(0.85, 1.0).unwrap() + 0.15).abs() < 1e-15);
        assert!(delta_i_over_i(1.0, 0.0).is_err());
    }

    #[test]
    fn encoding_follows_input_order() {
        let program = SequenceProgram::default();
        let v = encode_pattern(&"111".parse().unwrap(), &program).unwrap();
        assert!(v.iter().all(|(_, x)| *x == 0.6));
        let v = encode_pattern(&"000".parse().unwrap(), &program).unwrap();
        assert!(v.iter().all(|(_, x)| *x == -0.6));
        let v = encode_pattern(&"100".parse().unwrap(), &program).unwrap();
        assert_eq!(v[0], ("A".to_string(), 0.6));
        assert_eq!(v[2], ("C".to_string(), -0.6));
        assert!(encode_pattern(&"10".parse().unwrap(), &program).is_err());
    }

    #[test]
    fn bit_patterns_round_trip_text() {
        for p in BitPattern::default_order() {
            assert_eq!(p.to_string().parse::<BitPattern>().unwrap(), p);
        }
        assert!("1x0".parse::<BitPattern>().is_err());
    }

    #[test]
    fn default_mac_schedule_lists_subsets_by_size() {
        let c = MacConfig::new(&["a", "b", "c"], "s", "d");
        let s = c.resolved_schedule();
        assert_eq!(s.len(), 7);
        assert_eq!(s[0], vec![0]);
        assert_eq!(s[3], vec![0, 1]);
        assert_eq!(s[6], vec![0, 1, 2]);
    }
}
