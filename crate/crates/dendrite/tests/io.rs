use dendrite::io::{self, load_state, load_topologies, save_state, save_topologies};
use dendrite::{exit, AppError};
use dendrite_core::presets;
use dendrite_core::solver::{run_transient, DriveWaveform, Phase};
use dendrite_core::{BoundaryCondition, ElectrochemicalState, Terminal};

fn write_read_drive(cell: &dendrite_core::SimulationCell) -> (Phase, Phase, Phase) {
    let mut write = BoundaryCondition::all_grounded(cell);
    for (id, v) in ["E1", "E2", "E3"].iter().zip([0.6, -0.6, 0.6]) {
        write.set(id, Terminal::Fixed(v));
    }
    write.set("S", Terminal::Floating);
    write.set("D", Terminal::Floating);
    let read = BoundaryCondition::all_grounded(cell).fixed("S", 0.1);
    (
        Phase::new("write", 10.0, write),
        Phase::new("read", 0.05, read),
        Phase::new("rest", 10.0, BoundaryCondition::all_grounded(cell)),
    )
}

#[test]
fn grown_topology_round_trips_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let cell = presets::sequence_network(11).unwrap();
    let path = dir.path().join("topology.json");
    save_topologies(&path, &cell.topologies).unwrap();
    assert_eq!(load_topologies(&path).unwrap(), cell.topologies);
    assert!(!dir.path().join("topology.json.tmp").exists());
}

#[test]
fn mid_sequence_state_round_trips_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let cell = presets::sequence_network(presets::DEMO_SEED).unwrap();
    let (write, read, rest) = write_read_drive(&cell);
    let mut wave = DriveWaveform::default();
    wave.push(write).push(read).push(rest);
    let (_, state) = run_transient(&cell, &wave, 0.1, &ElectrochemicalState::pristine(&cell)).unwrap();
    assert!(state.trapped.iter().any(|&q| q > 0.0));
    let path = dir.path().join("state.json");
    save_state(&path, &cell, &state, 20.05).unwrap();
    let saved = load_state(&path).unwrap();
    assert_eq!(saved.cell, cell);
    assert_eq!(saved.state, state);
    assert_eq!(saved.time, 20.05);
}

#[test]
fn resumed_run_matches_the_uninterrupted_tail() {
    let dir = tempfile::tempdir().unwrap();
    let cell = presets::sequence_network(presets::DEMO_SEED).unwrap();
    let (write, read, rest) = write_read_drive(&cell);
    let dt = 0.1;
    let init = ElectrochemicalState::pristine(&cell);

    let mut straight = DriveWaveform::default();
    straight.push(write.clone()).push(read.clone()).push(rest.clone()).push(write.clone()).push(read.clone());
    let (full, full_state) = run_transient(&cell, &straight, dt, &init).unwrap();

    let mut head = DriveWaveform::default();
    head.push(write.clone()).push(read.clone()).push(rest);
    let (_, mid) = run_transient(&cell, &head, dt, &init).unwrap();
    let path = dir.path().join("mid.json");
    save_state(&path, &cell, &mid, 20.05).unwrap();
    let saved = load_state(&path).unwrap();

    let mut tail = DriveWaveform::default();
    tail.push(write).push(read);
    let (resumed, resumed_state) = run_transient(&saved.cell, &tail, dt, &saved.state).unwrap();

    let offset = full.phases[3].first_sample;
    assert_eq!(full.len() - offset, resumed.len());
    let scale = full.currents.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    for k in 0..resumed.len() {
        assert!((full.times[offset + k] - (20.05 + resumed.times[k])).abs() < 1e-9);
        for (a, b) in full.current_row(offset + k).iter().zip(resumed.current_row(k)) {
            assert!((a - b).abs() <= 1e-12 * scale, "sample {k}: {a} vs {b}");
        }
    }
    for (a, b) in full_state.doping.iter().zip(&resumed_state.doping) {
        assert!((a - b).abs() <= 1e-12);
    }
}

#[test]
fn truncated_state_file_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    let cell = presets::y_device().unwrap();
    let path = dir.path().join("state.json");
    save_state(&path, &cell, &ElectrochemicalState::pristine(&cell), 0.0).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    std::fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
    let err = load_state(&path).unwrap_err();
    assert!(matches!(err, AppError::Format { .. }), "{err}");
    assert_eq!(err.exit_code(), exit::IO);
}

#[test]
fn state_for_another_cell_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    let cell = presets::y_device().unwrap();
    let path = dir.path().join("state.json");
    save_state(&path, &cell, &ElectrochemicalState::pristine(&cell), 0.0).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    let mut value: serde_json::Value = serde_json::from_str(&text).unwrap();
    value["state"]["doping"].as_array_mut().unwrap().pop();
    std::fs::write(&path, serde_json::to_string(&value).unwrap()).unwrap();
    assert!(matches!(load_state(&path).unwrap_err(), AppError::Format { .. }));
}

#[test]
fn version_mismatch_names_both_versions() {
    let dir = tempfile::tempdir().unwrap();
    let cell = presets::y_device().unwrap();
    let path = dir.path().join("state.json");
    save_state(&path, &cell, &ElectrochemicalState::pristine(&cell), 0.0).unwrap();
    let text = std::fs::read_to_string(&path).unwrap().replace("\"version\": 1", "\"version\": 7");
    std::fs::write(&path, text).unwrap();
    let err = load_state(&path).unwrap_err();
    assert!(matches!(err, AppError::Version { found: 7, expected: 1, .. }), "{err}");
    assert!(err.to_string().contains("re-create"));
}

#[test]
fn wrong_file_kind_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    let cell = presets::y_device().unwrap();
    let path = dir.path().join("topology.json");
    save_topologies(&path, &cell.topologies).unwrap();
    let err = load_state(&path).unwrap_err();
    assert!(err.to_string().contains("dendrite-state"), "{err}");
}

#[test]
fn invalid_topology_is_reported_by_name() {
    let dir = tempfile::tempdir().unwrap();
    let mut t = presets::y_device().unwrap().topologies[0].clone();
    t.segments[0].endpoints[1] = dendrite_core::NodeId(999);
    let path = dir.path().join("broken.json");
    save_topologies(&path, &[t]).unwrap();
    let err = load_topologies(&path).unwrap_err().to_string();
    assert!(err.contains("dangling"), "{err}");
}

#[test]
fn trace_csv_has_documented_columns_and_exact_values() {
    let cell = presets::y_device().unwrap();
    let mut wave = DriveWaveform::default();
    wave.push(Phase::new("drive", 1.0, BoundaryCondition::new().fixed("A", 0.3).ground("C")));
    let (trace, _) = run_transient(&cell, &wave, 0.1, &ElectrochemicalState::pristine(&cell)).unwrap();
    let bytes = io::trace_csv(&trace).unwrap();
    let mut reader = csv::Reader::from_reader(bytes.as_slice());
    let header: Vec<String> = reader.headers().unwrap().iter().map(String::from).collect();
    assert_eq!(&header[..2], ["time_s", "electrolyte_V"]);
    assert_eq!(header[2], "I_A_A");
    assert_eq!(header.len(), 2 + trace.electrode_ids.len() + trace.node_labels.len());
    let rows: Vec<csv::StringRecord> = reader.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), trace.len());
    for (k, row) in rows.iter().enumerate() {
        assert_eq!(row[0].parse::<f64>().unwrap(), trace.times[k]);
        assert_eq!(row[2].parse::<f64>().unwrap(), trace.current(k, 0));
    }
}

#[test]
fn spider_csv_is_long_format() {
    let stats = dendrite_core::analysis::SignatureStats {
        patterns: vec!["111".into(), "000".into()],
        mean: vec![0.1, -0.2],
        std: vec![0.01, 0.02],
        cycles: 5,
    };
    let text = String::from_utf8(io::spider_csv(&[("dev".into(), stats)]).unwrap()).unwrap();
    assert_eq!(text, "pattern,mean,std,device\n111,0.1,0.01,dev\n000,-0.2,0.02,dev\n");
}
