//! Persisted artifacts: topology and state files, CSV exports, run manifest.
//!
//! JSON files carry a `format` tag and a `version`; a file written by an
//! incompatible version is refused with a migration hint rather than
//! half-read. Files are written to a temporary sibling and renamed into
//! place, so a crash never leaves a truncated artifact behind.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use dendrite_core::analysis::{SignatureStats, SignatureVector};
use dendrite_core::solver::Trace;
use dendrite_core::topology::validate_topology;
use dendrite_core::{ElectrochemicalState, NetworkTopology, SimulationCell};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{AppError, AppResult};

pub const TOPOLOGY_FORMAT: &str = "dendrite-topology";
pub const STATE_FORMAT: &str = "dendrite-state";
pub const MANIFEST_FORMAT: &str = "dendrite-manifest";
pub const FORMAT_VERSION: u32 = 1;

/// Writes `bytes` to `path` through a temporary file in the same directory.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> AppResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| AppError::io(dir, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    let result = fs::File::create(&tmp)
        .and_then(|mut f| {
            f.write_all(bytes)?;
            f.sync_all()
        })
        .and_then(|_| fs::rename(&tmp, path));
    if let Err(e) = result {
        let _ = fs::remove_file(&tmp);
        return Err(AppError::io(path, e));
    }
    Ok(())
}

fn to_json<T: Serialize>(value: &T) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(value).expect("artifact types serialize");
    out.push(b'\n');
    out
}

#[derive(Serialize)]
struct Tagged<'a, T> {
    format: &'a str,
    version: u32,
    #[serde(flatten)]
    body: &'a T,
}

fn versioned_bytes<T: Serialize>(format: &str, body: &T) -> Vec<u8> {
    to_json(&Tagged { format, version: FORMAT_VERSION, body })
}

/// Reads a versioned JSON artifact, checking its tag before its body.
fn read_versioned<T: DeserializeOwned>(path: &Path, format: &str) -> AppResult<T> {
    let text = fs::read_to_string(path).map_err(|e| AppError::io(path, e))?;
    let bad = |reason: String| AppError::Format { path: path.to_path_buf(), reason };
    let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| bad(e.to_string()))?;
    let serde_json::Value::Object(mut map) = value else {
        return Err(bad("expected a JSON object".into()));
    };
    let found = map.remove("format");
    let found = found.as_ref().and_then(|f| f.as_str()).unwrap_or("");
    if found != format {
        return Err(bad(format!("expected a `{format}` file, found `{found}`")));
    }
    let version = map.remove("version").and_then(|v| v.as_u64()).ok_or_else(|| bad("missing `version`".into()))?;
    if version != u64::from(FORMAT_VERSION) {
        return Err(AppError::Version {
            path: path.to_path_buf(),
            found: u32::try_from(version).unwrap_or(u32::MAX),
            expected: FORMAT_VERSION,
        });
    }
    serde_json::from_value(serde_json::Value::Object(map)).map_err(|e| bad(e.to_string()))
}

// ---------------------------------------------------------------------------
// Topology files
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TopologyBody {
    topologies: Vec<NetworkTopology>,
}

pub fn topology_bytes(topologies: &[NetworkTopology]) -> Vec<u8> {
    versioned_bytes(TOPOLOGY_FORMAT, &TopologyBody { topologies: topologies.to_vec() })
}

pub fn save_topologies(path: &Path, topologies: &[NetworkTopology]) -> AppResult<()> {
    write_atomic(path, &topology_bytes(topologies))
}

/// Loads and validates a topology file.
pub fn load_topologies(path: &Path) -> AppResult<Vec<NetworkTopology>> {
    let body: TopologyBody = read_versioned(path, TOPOLOGY_FORMAT)?;
    if body.topologies.is_empty() {
        return Err(AppError::Format { path: path.into(), reason: "no topologies".into() });
    }
    for t in &body.topologies {
        if let Some(issue) = validate_topology(t).first() {
            return Err(AppError::Format { path: path.into(), reason: format!("topology `{}`: {issue}", t.name) });
        }
    }
    Ok(body.topologies)
}

// ---------------------------------------------------------------------------
// State files
// ---------------------------------------------------------------------------

/// A cell together with its electrochemical state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SavedState {
    pub cell: SimulationCell,
    pub state: ElectrochemicalState,
    /// Simulated time at which the state was taken (s).
    #[serde(default)]
    pub time: f64,
}

pub fn save_state(path: &Path, cell: &SimulationCell, state: &ElectrochemicalState, time: f64) -> AppResult<()> {
    state.check(cell)?;
    write_atomic(path, &state_bytes(cell, state, time))
}

fn state_bytes(cell: &SimulationCell, state: &ElectrochemicalState, time: f64) -> Vec<u8> {
    versioned_bytes(STATE_FORMAT, &SavedState { cell: cell.clone(), state: state.clone(), time })
}

/// Loads a state file. The cell is reassembled and the state checked
/// against it, so a successful load is always a consistent pair.
pub fn load_state(path: &Path) -> AppResult<SavedState> {
    let saved: SavedState = read_versioned(path, STATE_FORMAT)?;
    saved.state.check(&saved.cell).map_err(|e| AppError::Format { path: path.into(), reason: e.to_string() })?;
    Ok(saved)
}

// ---------------------------------------------------------------------------
// CSV exports
// ---------------------------------------------------------------------------

fn csv_bytes(header: &[String], rows: impl Iterator<Item = Vec<String>>) -> AppResult<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let fail = |e: csv::Error| AppError::Format { path: PathBuf::from("<csv>"), reason: e.to_string() };
    w.write_record(header).map_err(fail)?;
    for row in rows {
        w.write_record(&row).map_err(fail)?;
    }
    w.into_inner().map_err(|e| AppError::Format { path: PathBuf::from("<csv>"), reason: e.to_string() })
}

/// Shortest representation that parses back to the same `f64`.
pub fn num(x: f64) -> String {
    format!("{x:?}")
}

/// Numeric table with the given header.
pub fn table_csv(header: &[&str], rows: &[Vec<f64>]) -> AppResult<Vec<u8>> {
    let header: Vec<String> = header.iter().map(|s| s.to_string()).collect();
    csv_bytes(&header, rows.iter().map(|r| r.iter().map(|&x| num(x)).collect()))
}

pub fn string_csv(header: &[&str], rows: impl Iterator<Item = Vec<String>>) -> AppResult<Vec<u8>> {
    let header: Vec<String> = header.iter().map(|s| s.to_string()).collect();
    csv_bytes(&header, rows)
}

/// Trace CSV: time, electrolyte potential, one current column per electrode
/// and one potential column per recorded node.
pub fn trace_csv(trace: &Trace) -> AppResult<Vec<u8>> {
    let mut header = vec!["time_s".to_string(), "electrolyte_V".to_string()];
    header.extend(trace.electrode_ids.iter().map(|id| format!("I_{id}_A")));
    let with_potentials = trace.potential_row(0).is_some();
    if with_potentials {
        header.extend(trace.node_labels.iter().map(|n| format!("V_{n}_V")));
    }
    let rows = (0..trace.len()).map(|k| {
        let mut row = vec![num(trace.times[k]), num(trace.electrolyte[k])];
        row.extend(trace.current_row(k).iter().map(|&x| num(x)));
        if let Some(v) = trace.potential_row(k) {
            row.extend(v.iter().map(|&x| num(x)));
        }
        row
    });
    csv_bytes(&header, rows)
}

/// Signature CSV: one row per cycle, one column per pattern.
pub fn signature_csv(sig: &SignatureVector) -> AppResult<Vec<u8>> {
    let mut header = vec!["cycle".to_string()];
    header.extend(sig.patterns.iter().cloned());
    let rows = sig.rows.iter().enumerate().map(|(c, row)| {
        let mut out = vec![c.to_string()];
        out.extend(row.iter().map(|&x| num(x)));
        out
    });
    csv_bytes(&header, rows)
}

/// Parses a signature CSV written by [`signature_csv`].
pub fn parse_signature_csv(bytes: &[u8]) -> Result<SignatureVector, String> {
    let mut r = csv::Reader::from_reader(bytes);
    let header = r.headers().map_err(|e| e.to_string())?.clone();
    if header.get(0) != Some("cycle") {
        return Err("first column must be `cycle`".into());
    }
    let patterns: Vec<String> = header.iter().skip(1).map(String::from).collect();
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| e.to_string())?;
        let row = rec.iter().skip(1).map(|x| x.parse::<f64>().map_err(|e| e.to_string())).collect::<Result<_, _>>()?;
        rows.push(row);
    }
    SignatureVector::new(patterns, rows).map_err(|e| e.to_string())
}

/// Long-format table for spider diagrams: pattern, mean, std, device.
pub fn spider_csv(devices: &[(String, SignatureStats)]) -> AppResult<Vec<u8>> {
    let header: Vec<String> = ["pattern", "mean", "std", "device"].iter().map(|s| s.to_string()).collect();
    let rows = devices.iter().flat_map(|(name, s)| {
        (0..s.patterns.len()).map(move |i| vec![s.patterns[i].clone(), num(s.mean[i]), num(s.std[i]), name.clone()])
    });
    csv_bytes(&header, rows)
}

/// Square distance table with device names on both axes.
pub fn distance_csv(names: &[String], matrix: &[Vec<f64>]) -> AppResult<Vec<u8>> {
    let mut header = vec!["device".to_string()];
    header.extend(names.iter().cloned());
    let rows = names.iter().zip(matrix).map(|(n, row)| {
        let mut out = vec![n.clone()];
        out.extend(row.iter().map(|&x| num(x)));
        out
    });
    csv_bytes(&header, rows)
}

// ---------------------------------------------------------------------------
// Reports and manifests
// ---------------------------------------------------------------------------

/// Plain `key: value` report, one entry per line.
#[derive(Clone, Debug, Default)]
pub struct Report {
    title: String,
    lines: Vec<(String, String)>,
}

impl Report {
    pub fn new(title: impl Into<String>) -> Self {
        Report { title: title.into(), lines: Vec::new() }
    }

    pub fn line(&mut self, key: impl Into<String>, value: impl ToString) -> &mut Self {
        self.lines.push((key.into(), value.to_string()));
        self
    }

    pub fn render(&self) -> String {
        let mut out = format!("# {}\n", self.title);
        for (k, v) in &self.lines {
            let _ = writeln!(out, "{k}: {v}");
        }
        out
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub tool: String,
    pub tool_version: String,
    pub command: String,
    pub seed: u64,
    /// SHA-256 of the config file bytes.
    pub config_sha256: String,
    pub config_path: String,
    /// The config with every default filled in.
    pub resolved_config: serde_json::Value,
    /// Output files relative to the output directory, with their SHA-256.
    pub outputs: Vec<OutputFile>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutputFile {
    pub path: String,
    pub sha256: String,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().fold(String::with_capacity(64), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

/// Collects output files and writes them, the manifest last.
#[derive(Debug)]
pub struct OutputSet {
    dir: PathBuf,
    outputs: Vec<OutputFile>,
    /// Input files that must never be overwritten.
    protected: Vec<PathBuf>,
}

impl OutputSet {
    pub fn new(dir: impl Into<PathBuf>) -> AppResult<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(|e| AppError::io(&dir, e))?;
        Ok(OutputSet { dir, outputs: Vec::new(), protected: Vec::new() })
    }

    /// Refuses later writes that would land on `input`.
    pub fn protect(&mut self, input: &Path) {
        if let Ok(p) = fs::canonicalize(input) {
            self.protected.push(p);
        }
    }

    fn check_target(&self, path: &Path) -> AppResult<()> {
        let target = fs::canonicalize(path).ok();
        if target.is_some() && self.protected.iter().any(|p| Some(p) == target.as_ref()) {
            return Err(AppError::io(
                path,
                std::io::Error::new(std::io::ErrorKind::AlreadyExists, "output would overwrite an input file"),
            ));
        }
        Ok(())
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> AppResult<PathBuf> {
        let path = self.dir.join(name);
        self.check_target(&path)?;
        write_atomic(&path, bytes)?;
        self.outputs.push(OutputFile { path: name.into(), sha256: sha256_hex(bytes) });
        Ok(path)
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> AppResult<PathBuf> {
        self.write(name, &to_json(value))
    }

    pub fn write_state(
        &mut self,
        name: &str,
        cell: &SimulationCell,
        state: &ElectrochemicalState,
        time: f64,
    ) -> AppResult<PathBuf> {
        state.check(cell)?;
        self.write(name, &state_bytes(cell, state, time))
    }

    pub fn outputs(&self) -> &[OutputFile] {
        &self.outputs
    }

    pub fn finish(self, mut manifest: Manifest) -> AppResult<PathBuf> {
        let path = self.dir.join("manifest.json");
        self.check_target(&path)?;
        manifest.outputs = self.outputs;
        write_atomic(&path, &to_json(&manifest))?;
        Ok(path)
    }
}
