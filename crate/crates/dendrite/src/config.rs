//! Run configuration: one TOML file describing a cell, at most one protocol
//! section, an output directory and the global seed.
//!
//! Parsing is strict. Unknown keys are errors, every default is
//! materialized in the loaded value, and semantic problems are reported with
//! the path of the offending field.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use dendrite_core::protocols::{BitPattern, MacConfig, SequenceProgram, SweepConfig, TransferConfig};
use dendrite_core::rng::{derive_seed, STREAM_GROWTH};
use dendrite_core::{
    presets, CouplingGeometry, DeviceParams, ElectrodeSpec, GrowthParams, NetworkTopology, SimulationCell,
};
use serde::{Deserialize, Serialize};

use crate::error::{AppError, AppResult};
use crate::io;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Global seed. Growth, read noise and population members all derive
    /// their seeds from it.
    #[serde(default)]
    pub seed: u64,
    /// Output directory, relative to the config file.
    #[serde(default = "default_output")]
    pub output: PathBuf,
    pub cell: CellConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rectify: Option<RectifyConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transfer: Option<TransferConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mac: Option<MacConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sequence: Option<SequenceProgram>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub signature: Option<SignatureConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub uniqueness: Option<UniquenessConfig>,
    /// Directory the config was loaded from; relative paths resolve here.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    YDevice,
    IntergatingPair,
    MacCell,
    /// Grown from the global seed.
    SequenceNetwork,
    /// Grown from the global seed.
    TwinNetworks,
}

impl Preset {
    pub fn is_seeded(self) -> bool {
        matches!(self, Preset::SequenceNetwork | Preset::TwinNetworks)
    }
}

/// Exactly one of `preset`, `topology` and `grow` describes the geometry.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CellConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<Preset>,
    /// Topology files, all placed in one shared electrolyte.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub topology: Vec<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grow: Option<GrowConfig>,
    #[serde(default = "default_dl")]
    pub electrode_dl_capacitance: f64,
    #[serde(default)]
    pub device: DeviceParams,
    #[serde(default)]
    pub coupling: CouplingGeometry,
}

fn default_dl() -> f64 {
    presets::ELECTRODE_DL_CAPACITANCE
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GrowConfig {
    #[serde(default = "default_name")]
    pub name: String,
    pub electrodes: Vec<ElectrodeSpec>,
    /// `seed` is filled in from the global seed.
    #[serde(default)]
    pub params: GrowthParams,
}

fn default_name() -> String {
    "network".into()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RectifyConfig {
    /// Index of the topology whose electrodes are permuted.
    pub topology: usize,
    pub v_max: f64,
    pub step: f64,
}

impl Default for RectifyConfig {
    fn default() -> Self {
        RectifyConfig { topology: 0, v_max: 0.9, step: 0.05 }
    }
}

/// A named input-electrode triple (or any ordered input list).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Projection {
    pub name: String,
    pub inputs: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SignatureConfig {
    /// Sequence settings shared by every projection. Its input electrodes
    /// are replaced by each projection's.
    pub program: SequenceProgram,
    pub projections: Vec<Projection>,
    /// Distance above which two signatures count as distinguishable.
    pub threshold: f64,
    /// When set, the first projection is also run with its patterns in this
    /// order and compared with the original.
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub reordered_patterns: Vec<BitPattern>,
}

impl Default for SignatureConfig {
    fn default() -> Self {
        SignatureConfig {
            program: SequenceProgram::default(),
            projections: Vec::new(),
            threshold: 3.0,
            reordered_patterns: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct UniquenessConfig {
    pub program: SequenceProgram,
    /// Population size. Device `i` is the cell regrown with seed `seed + i`.
    /// Ignored when `networks` is given.
    pub devices: usize,
    /// Repeated measurements per device, each with fresh read noise.
    pub replicates: usize,
    /// Networks sharing one cell and one readout, each addressed through its
    /// own inputs. When non-empty these are the devices compared.
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub networks: Vec<Projection>,
    pub threshold: f64,
    /// Worker threads; 0 uses every available core.
    pub workers: usize,
}

impl Default for UniquenessConfig {
    fn default() -> Self {
        UniquenessConfig {
            program: SequenceProgram::default(),
            devices: 20,
            replicates: 3,
            networks: Vec::new(),
            threshold: 3.0,
            workers: 0,
        }
    }
}

/// The protocol section a config carries.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Protocol {
    Sweep,
    Rectify,
    Transfer,
    Mac,
    Sequence,
    Signature,
    Uniqueness,
}

impl Protocol {
    pub fn name(self) -> &'static str {
        match self {
            Protocol::Sweep => "sweep",
            Protocol::Rectify => "rectify",
            Protocol::Transfer => "transfer",
            Protocol::Mac => "mac",
            Protocol::Sequence => "sequence",
            Protocol::Signature => "signature",
            Protocol::Uniqueness => "uniqueness",
        }
    }
}

/// Keys that would bypass the global seed.
const SEED_OVERRIDES: [&[&str]; 4] = [
    &["sequence", "noise_seed"],
    &["signature", "program", "noise_seed"],
    &["uniqueness", "program", "noise_seed"],
    &["cell", "grow", "params", "seed"],
];

/// Reads, parses and validates a config file.
pub fn load_config(path: &Path) -> AppResult<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| AppError::io(path, e))?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let config = parse_config(&text, &base)?;
    config.check_files()?;
    Ok(config)
}

/// Parses and validates config text. Relative paths resolve against `base`;
/// file existence is not checked.
pub fn parse_config(text: &str, base: &Path) -> AppResult<RunConfig> {
    let raw: toml::Table = toml::from_str(text).map_err(|e| AppError::config(e.to_string().trim_end().to_string()))?;
    for keys in SEED_OVERRIDES {
        if lookup(&raw, keys).is_some() {
            return Err(AppError::config(format!(
                "{}: seeds derive from the global `seed` and cannot be set here",
                keys.join(".")
            )));
        }
    }
    let mut config: RunConfig =
        toml::from_str(text).map_err(|e| AppError::config(e.to_string().trim_end().to_string()))?;
    config.base_dir = base.to_path_buf();
    config.apply_seed();
    config.validate()?;
    Ok(config)
}

fn lookup<'a>(table: &'a toml::Table, keys: &[&str]) -> Option<&'a toml::Value> {
    let (last, parents) = keys.split_last()?;
    let mut t = table;
    for k in parents {
        t = t.get(*k)?.as_table()?;
    }
    t.get(*last)
}

impl RunConfig {
    pub fn protocols(&self) -> Vec<Protocol> {
        let mut out = Vec::new();
        let present = [
            (self.sweep.is_some(), Protocol::Sweep),
            (self.rectify.is_some(), Protocol::Rectify),
            (self.transfer.is_some(), Protocol::Transfer),
            (self.mac.is_some(), Protocol::Mac),
            (self.sequence.is_some(), Protocol::Sequence),
            (self.signature.is_some(), Protocol::Signature),
            (self.uniqueness.is_some(), Protocol::Uniqueness),
        ];
        for (on, p) in present {
            if on {
                out.push(p);
            }
        }
        out
    }

    pub fn protocol(&self) -> Option<Protocol> {
        self.protocols().first().copied()
    }

    pub fn output_dir(&self) -> PathBuf {
        self.base_dir.join(&self.output)
    }

    /// Replaces the global seed and every seed derived from it.
    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.apply_seed();
    }

    /// Seeds derived from the global seed written into the sections that
    /// consume them.
    fn apply_seed(&mut self) {
        let seed = self.seed;
        for program in [
            self.sequence.as_mut(),
            self.signature.as_mut().map(|s| &mut s.program),
            self.uniqueness.as_mut().map(|u| &mut u.program),
        ]
        .into_iter()
        .flatten()
        {
            program.noise_seed = seed;
        }
        if let Some(g) = &mut self.cell.grow {
            g.params.seed = derive_seed(seed, STREAM_GROWTH);
        }
    }

    /// Structural and range checks that need no cell.
    pub fn validate(&self) -> AppResult<()> {
        let protocols = self.protocols();
        if protocols.len() > 1 {
            let names: Vec<&str> = protocols.iter().map(|p| p.name()).collect();
            return Err(AppError::config(format!(
                "exactly one protocol section is allowed, found {}",
                names.join(", ")
            )));
        }
        self.validate_cell()?;
        fn at(field: &str) -> impl Fn(dendrite_core::Error) -> AppError + '_ {
            move |e| AppError::config(format!("{field}: {e}"))
        }
        if let Some(s) = &self.sweep {
            s.voltages().map_err(at("sweep"))?;
        }
        if let Some(r) = &self.rectify {
            if !(r.v_max > 0.0 && r.step > 0.0) {
                return Err(AppError::config("rectify: v_max and step must be positive"));
            }
        }
        if let Some(t) = &self.transfer {
            for (name, v) in [("gate", &t.gate), ("source", &t.source), ("drain", &t.drain)] {
                if v.is_empty() {
                    return Err(AppError::config(format!("transfer.{name}: electrode id is required")));
                }
            }
            if !t.gate_biases.contains(&0.0) {
                return Err(AppError::config("transfer.gate_biases: must include 0"));
            }
        }
        if let Some(m) = &self.mac {
            if m.inputs.is_empty() {
                return Err(AppError::config("mac.inputs: at least one input is required"));
            }
            unique_ids("mac.inputs", m.inputs.iter())?;
        }
        if let Some(p) = &self.sequence {
            p.validate().map_err(at("sequence"))?;
            unique_ids("sequence.input_electrodes", p.input_electrodes.iter())?;
        }
        if let Some(s) = &self.signature {
            if s.projections.is_empty() {
                return Err(AppError::config("signature.projections: at least one projection is required"));
            }
            unique_ids("signature.projections", s.projections.iter().map(|p| &p.name))?;
            for (i, p) in s.projections.iter().enumerate() {
                let program = s.program_for(p);
                program.validate().map_err(at(&format!("signature.projections[{i}]")))?;
            }
            if !(s.threshold > 0.0) {
                return Err(AppError::config("signature.threshold: must be positive"));
            }
            if !s.reordered_patterns.is_empty() {
                let mut a: Vec<String> = s.program.patterns.iter().map(ToString::to_string).collect();
                let mut b: Vec<String> = s.reordered_patterns.iter().map(ToString::to_string).collect();
                a.sort();
                b.sort();
                if a != b {
                    return Err(AppError::config(
                        "signature.reordered_patterns: must hold the same patterns as signature.program.patterns",
                    ));
                }
            }
        }
        if let Some(u) = &self.uniqueness {
            if u.replicates < 2 {
                return Err(AppError::config("uniqueness.replicates: at least two replicates are required"));
            }
            if !(u.threshold > 0.0) {
                return Err(AppError::config("uniqueness.threshold: must be positive"));
            }
            if !(u.program.read_noise > 0.0) {
                return Err(AppError::config(
                    "uniqueness.program.read_noise: replicates differ only by read noise, which must be positive",
                ));
            }
            if u.networks.is_empty() {
                if u.devices < 2 {
                    return Err(AppError::config("uniqueness.devices: at least two devices are required"));
                }
                let seeded = self.cell.grow.is_some() || self.cell.preset.is_some_and(Preset::is_seeded);
                if !seeded {
                    return Err(AppError::config(
                        "uniqueness: a population needs a grown cell (cell.grow or a seeded preset)",
                    ));
                }
                u.program.validate().map_err(at("uniqueness.program"))?;
            } else {
                if u.networks.len() < 2 {
                    return Err(AppError::config("uniqueness.networks: at least two networks are required"));
                }
                unique_ids("uniqueness.networks", u.networks.iter().map(|p| &p.name))?;
                for (i, n) in u.networks.iter().enumerate() {
                    u.program_for(n).validate().map_err(at(&format!("uniqueness.networks[{i}]")))?;
                }
            }
        }
        Ok(())
    }

    fn validate_cell(&self) -> AppResult<()> {
        let c = &self.cell;
        let sources = c.preset.is_some() as usize + (!c.topology.is_empty()) as usize + c.grow.is_some() as usize;
        if sources != 1 {
            return Err(AppError::config("cell: give exactly one of `preset`, `topology` or `grow`"));
        }
        if !(c.electrode_dl_capacitance >= 0.0 && c.electrode_dl_capacitance.is_finite()) {
            return Err(AppError::config("cell.electrode_dl_capacitance: must be non-negative"));
        }
        c.device.validate().map_err(|e| AppError::config(format!("cell.device: {e}")))?;
        if !(c.coupling.exponent >= 0.0 && c.coupling.length_scale_um > 0.0) {
            return Err(AppError::config("cell.coupling: exponent must be >= 0 and length_scale_um > 0"));
        }
        if let Some(g) = &c.grow {
            if g.electrodes.len() < 2 {
                return Err(AppError::config("cell.grow.electrodes: at least two electrodes are required"));
            }
            let mut seen = BTreeSet::new();
            for (i, e) in g.electrodes.iter().enumerate() {
                if !seen.insert(e.id.as_str()) {
                    return Err(AppError::config(format!(
                        "cell.grow.electrodes[{i}].id: duplicate electrode id `{}`",
                        e.id
                    )));
                }
            }
            for (i, e) in g.electrodes.iter().enumerate() {
                if let Some(t) = &e.grow_toward {
                    if !seen.contains(t.as_str()) || t == &e.id {
                        return Err(AppError::config(format!(
                            "cell.grow.electrodes[{i}].grow_toward: `{t}` is not another electrode"
                        )));
                    }
                }
            }
            g.params.validate().map_err(|e| AppError::config(format!("cell.grow.params: {e}")))?;
        }
        Ok(())
    }

    /// Every referenced file exists.
    pub fn check_files(&self) -> AppResult<()> {
        for p in &self.cell.topology {
            let full = self.base_dir.join(p);
            if !full.is_file() {
                return Err(AppError::io(
                    full,
                    std::io::Error::new(std::io::ErrorKind::NotFound, "referenced by cell.topology"),
                ));
            }
        }
        Ok(())
    }

    /// Builds the configured cell.
    pub fn build_cell(&self) -> AppResult<SimulationCell> {
        self.build_cell_with_seed(self.seed)
    }

    /// Builds the cell, regrowing seeded geometry from `seed`.
    pub fn build_cell_with_seed(&self, seed: u64) -> AppResult<SimulationCell> {
        let c = &self.cell;
        let topologies: Vec<NetworkTopology> = if let Some(preset) = c.preset {
            let cell = match preset {
                Preset::YDevice => presets::y_device(),
                Preset::IntergatingPair => presets::intergating_pair(),
                Preset::MacCell => presets::mac_cell(),
                Preset::SequenceNetwork => presets::sequence_network(seed),
                Preset::TwinNetworks => presets::twin_networks(seed),
            }?;
            cell.topologies
        } else if let Some(g) = &c.grow {
            let params = GrowthParams { seed: derive_seed(seed, STREAM_GROWTH), ..g.params.clone() };
            vec![dendrite_core::topology::grow_network(g.name.clone(), &g.electrodes, &params)?]
        } else {
            let mut out = Vec::new();
            for p in &c.topology {
                out.extend(io::load_topologies(&self.base_dir.join(p))?);
            }
            out
        };
        let cell = SimulationCell::new(topologies, c.electrode_dl_capacitance, c.device.clone(), c.coupling.clone())
            .map_err(|e| AppError::config(format!("cell: {e}")))?;
        self.check_references(&cell)?;
        Ok(cell)
    }

    /// Every electrode named by the protocol section exists in `cell`.
    pub fn check_references(&self, cell: &SimulationCell) -> AppResult<()> {
        let check = |field: String, id: &str| -> AppResult<()> {
            cell.electrode_index(id).map(|_| ()).map_err(|e| AppError::config(format!("{field}: {e}")))
        };
        let check_all = |field: &str, ids: &[String]| -> AppResult<()> {
            ids.iter().enumerate().try_for_each(|(i, id)| check(format!("{field}[{i}]"), id))
        };
        let check_program = |field: &str, p: &SequenceProgram| -> AppResult<()> {
            check_all(&format!("{field}.input_electrodes"), &p.input_electrodes)?;
            check(format!("{field}.readout_source"), &p.readout_source)?;
            check(format!("{field}.readout_drain"), &p.readout_drain)
        };
        if let Some(s) = &self.sweep {
            check_all("sweep.swept", &s.swept)?;
            check_all("sweep.grounds", &s.grounds)?;
        }
        if let Some(r) = &self.rectify {
            if r.topology >= cell.topologies.len() {
                return Err(AppError::config(format!(
                    "rectify.topology: index {} but the cell has {} topologies",
                    r.topology,
                    cell.topologies.len()
                )));
            }
        }
        if let Some(t) = &self.transfer {
            check("transfer.gate".into(), &t.gate)?;
            check("transfer.source".into(), &t.source)?;
            check("transfer.drain".into(), &t.drain)?;
        }
        if let Some(m) = &self.mac {
            check_all("mac.inputs", &m.inputs)?;
            check("mac.readout_source".into(), &m.readout_source)?;
            check("mac.readout_drain".into(), &m.readout_drain)?;
        }
        if let Some(p) = &self.sequence {
            check_program("sequence", p)?;
        }
        if let Some(s) = &self.signature {
            for (i, p) in s.projections.iter().enumerate() {
                check_program(&format!("signature.projections[{i}]"), &s.program_for(p))?;
            }
        }
        if let Some(u) = &self.uniqueness {
            if u.networks.is_empty() {
                check_program("uniqueness.program", &u.program)?;
            }
            for (i, n) in u.networks.iter().enumerate() {
                check_program(&format!("uniqueness.networks[{i}]"), &u.program_for(n))?;
            }
        }
        Ok(())
    }
}

impl SignatureConfig {
    pub fn program_for(&self, projection: &Projection) -> SequenceProgram {
        SequenceProgram { input_electrodes: projection.inputs.clone(), ..self.program.clone() }
    }
}

impl UniquenessConfig {
    pub fn program_for(&self, network: &Projection) -> SequenceProgram {
        SequenceProgram { input_electrodes: network.inputs.clone(), ..self.program.clone() }
    }
}

fn unique_ids<'a>(field: &str, ids: impl Iterator<Item = &'a String>) -> AppResult<()> {
    let mut seen = BTreeSet::new();
    for (i, id) in ids.enumerate() {
        if !seen.insert(id) {
            return Err(AppError::config(format!("{field}[{i}]: duplicate id `{id}`")));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> AppResult<RunConfig> {
        parse_config(text, Path::new("."))
    }

    const MINIMAL: &str = r#"
        [cell]
        preset = "sequence-network"

        [sequence]
        input_electrodes = ["E1", "E2", "E3"]
        readout_source = "S"
        readout_drain = "D"
    "#;

    #[test]
    fn minimal_config_fills_protocol_defaults() {
        let c = parse(MINIMAL).unwrap();
        let p = c.sequence.as_ref().unwrap();
        assert_eq!(p.write_duration, 10.0);
        assert_eq!(p.read_duration, 0.05);
        assert_eq!(p.rest_duration, 10.0);
        assert_eq!((p.high_voltage, p.low_voltage), (0.6, -0.6));
        assert_eq!(p.read_bias, 0.1);
        assert_eq!(c.cell.device, DeviceParams::default());
        assert_eq!(c.protocol(), Some(Protocol::Sequence));
        let echoed = serde_json::to_value(&c).unwrap();
        assert_eq!(echoed["sequence"]["write_duration"], 10.0);
        assert_eq!(echoed["cell"]["device"]["pinchoff_voltage"], DeviceParams::default().pinchoff_voltage);
    }

    #[test]
    fn unknown_field_is_rejected_with_position() {
        let err = parse(&format!("{MINIMAL}\nbogus = 1\n")).unwrap_err().to_string();
        assert!(err.contains("bogus") && err.contains("line"), "{err}");
    }

    #[test]
    fn duplicate_electrode_id_is_named() {
        let text = r#"
            [cell.grow]
            electrodes = [
                { id = "A", position = { x = 0, y = 0 }, role = "input", grow_toward = "B" },
                { id = "B", position = { x = 200, y = 0 }, role = "ground" },
                { id = "A", position = { x = 0, y = 200 }, role = "input" },
            ]
        "#;
        let err = parse(text).unwrap_err().to_string();
        assert!(err.contains("cell.grow.electrodes[2].id") && err.contains("`A`"), "{err}");
    }

    #[test]
    fn two_protocol_sections_are_rejected() {
        let err = parse(&format!("{MINIMAL}\n[mac]\ninputs = [\"E1\"]\n")).unwrap_err().to_string();
        assert!(err.contains("exactly one protocol"), "{err}");
    }

    #[test]
    fn explicit_noise_seed_is_rejected() {
        let err = parse(&format!("{MINIMAL}\nnoise_seed = 4\n")).unwrap_err().to_string();
        assert!(err.contains("sequence.noise_seed"), "{err}");
    }

    #[test]
    fn semantic_errors_carry_field_paths() {
        let err = parse(&MINIMAL.replace("[sequence]", "[sequence]\ncycles = 0")).unwrap_err().to_string();
        assert!(err.contains("sequence:") && err.contains("cycles"), "{err}");
        let c = parse(&MINIMAL.replace("\"E3\"", "\"E9\"")).unwrap();
        let err = c.build_cell().unwrap_err().to_string();
        assert!(err.contains("sequence.input_electrodes[2]") && err.contains("E9"), "{err}");
    }

    #[test]
    fn global_seed_reaches_noise_and_growth() {
        let c = parse(&format!("seed = 42\n{MINIMAL}")).unwrap();
        assert_eq!(c.sequence.unwrap().noise_seed, 42);
    }
}
