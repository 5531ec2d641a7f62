use std::path::{Path, PathBuf};

use dendrite::exit;

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn run(args: &[&str]) -> (u8, String, String) {
    let mut argv = vec!["dendrite"];
    argv.extend_from_slice(args);
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let code = dendrite::run_cli(argv, &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn every_shipped_config_validates() {
    let mut seen = 0;
    for entry in std::fs::read_dir(configs()).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            let (code, out, err) = run(&["validate", s(&path)]);
            assert_eq!(code, exit::OK, "{}: {err}", path.display());
            assert_eq!(out.trim(), "config OK");
            seen += 1;
        }
    }
    assert!(seen >= 8);
}

#[test]
fn growth_with_a_fixed_seed_is_hash_equal() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = configs().join("reference.toml");
    let topo = |name: &str, seed: &str| {
        let out = dir.path().join(name);
        let (code, _, err) = run(&["grow", s(&cfg), "--output", s(&out), "--seed", seed]);
        assert_eq!(code, exit::OK, "{err}");
        std::fs::read(out.join("topology.json")).unwrap()
    };
    let a = topo("a", "5");
    let b = topo("b", "5");
    let c = topo("c", "6");
    assert_eq!(dendrite::io::sha256_hex(&a), dendrite::io::sha256_hex(&b));
    assert_ne!(a, c);
}

#[test]
fn manifest_records_seed_hash_version_and_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = configs().join("sequence.toml");
    let out = dir.path().join("run");
    let (code, stdout, err) = run(&["sequence", s(&cfg), "-o", s(&out)]);
    assert_eq!(code, exit::OK, "{err}");
    assert!(stdout.starts_with("sequence: "));
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 68);
    assert_eq!(manifest["tool_version"], env!("CARGO_PKG_VERSION"));
    let hash = dendrite::io::sha256_hex(&std::fs::read(&cfg).unwrap());
    assert_eq!(manifest["config_sha256"], hash.as_str());
    let seq = &manifest["resolved_config"]["sequence"];
    assert_eq!(seq["write_duration"], 10.0);
    assert_eq!(seq["read_duration"], 0.05);
    assert_eq!(seq["noise_seed"], 68);
    let outputs: Vec<&str> =
        manifest["outputs"].as_array().unwrap().iter().map(|o| o["path"].as_str().unwrap()).collect();
    for name in ["trace.csv", "signature.csv", "state.json", "report.txt"] {
        assert!(outputs.contains(&name), "{name} missing from {outputs:?}");
        let bytes = std::fs::read(out.join(name)).unwrap();
        let entry = manifest["outputs"].as_array().unwrap().iter().find(|o| o["path"] == name).unwrap();
        assert_eq!(entry["sha256"], dendrite::io::sha256_hex(&bytes).as_str());
    }
}

#[test]
fn sequence_resumes_from_a_saved_state() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("short.toml");
    std::fs::write(
        &cfg,
        "seed = 68\n[cell]\npreset = \"sequence-network\"\n[sequence]\ninput_electrodes = [\"E1\", \"E2\", \"E3\"]\ncycles = 1\nwarmup_cycles = 0\n",
    )
    .unwrap();
    let first = dir.path().join("first");
    assert_eq!(run(&["sequence", s(&cfg), "-o", s(&first)]).0, exit::OK);
    let second = dir.path().join("second");
    let state = first.join("state.json");
    let (code, _, err) = run(&["sequence", s(&cfg), "-o", s(&second), "--state", s(&state)]);
    assert_eq!(code, exit::OK, "{err}");
    let a = dendrite::io::load_state(&state).unwrap();
    let b = dendrite::io::load_state(&second.join("state.json")).unwrap();
    assert!(b.time > a.time && (b.time - 2.0 * a.time).abs() < 1e-9);
    assert_ne!(a.state, b.state);
}

#[test]
fn failures_have_distinct_exit_codes_and_one_line() {
    let dir = tempfile::tempdir().unwrap();
    let write = |name: &str, text: &str| {
        let p = dir.path().join(name);
        std::fs::write(&p, text).unwrap();
        p
    };
    let check = |args: &[&str], code: u8, needle: &str| {
        let (got, _, err) = run(args);
        assert_eq!(got, code, "{args:?}: {err}");
        assert_eq!(err.trim_end().lines().count(), 1, "{err}");
        assert!(err.contains(needle), "{err} lacks {needle}");
    };

    check(&["frobnicate", "x.toml"], exit::USAGE, "frobnicate");

    let unknown = write("unknown.toml", "[cell]\npreset = \"y-device\"\ncolour = 3\n");
    check(&["validate", s(&unknown)], exit::CONFIG, "colour");

    let malformed = write("malformed.toml", "[cell\npreset = 1\n");
    check(&["validate", s(&malformed)], exit::CONFIG, "line");

    let dup = write(
        "dup.toml",
        "[cell.grow]\nelectrodes = [\n  { id = \"A\", position = { x = 0, y = 0 }, role = \"input\" },\n  { id = \"A\", position = { x = 9, y = 0 }, role = \"input\" },\n]\n",
    );
    check(&["validate", s(&dup)], exit::CONFIG, "duplicate electrode id `A`");

    let missing = write("missing.toml", "[cell]\ntopology = [\"nowhere.json\"]\n");
    check(&["validate", s(&missing)], exit::IO, "nowhere.json");
    check(&["validate", s(&dir.path().join("absent.toml"))], exit::IO, "absent.toml");

    let y = configs().join("y-device-sweep.toml");
    check(&["mac", s(&y), "-o", s(&dir.path().join("o1"))], exit::CONFIG, "[mac]");

    // The thin dendrite of the pair has no held electrode during this sweep.
    let singular = write(
        "singular.toml",
        "[cell]\npreset = \"intergating-pair\"\n[sweep]\nswept = [\"K1\"]\ngrounds = [\"K2\"]\nstart = -0.5\nend = 0.5\nstep = 0.1\n",
    );
    check(&["sweep", s(&singular), "-o", s(&dir.path().join("o2"))], exit::SOLVER, "singular");
}

#[test]
fn inputs_are_never_overwritten() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("report.txt");
    let text = "output = \".\"\n[cell]\npreset = \"y-device\"\n";
    std::fs::write(&cfg, text).unwrap();
    let (code, _, err) = run(&["grow", s(&cfg)]);
    assert_eq!(code, exit::IO, "{err}");
    assert!(err.contains("overwrite an input"), "{err}");
    assert_eq!(std::fs::read_to_string(&cfg).unwrap(), text);
}

#[test]
fn grown_topology_file_feeds_a_later_run() {
    let dir = tempfile::tempdir().unwrap();
    let grown = dir.path().join("grown");
    let (code, _, err) = run(&["grow", s(&configs().join("sequence.toml")), "-o", s(&grown)]);
    assert_eq!(code, exit::OK, "{err}");
    let cfg = dir.path().join("from-file.toml");
    std::fs::write(
        &cfg,
        "seed = 68\n[cell]\ntopology = [\"grown/topology.json\"]\n[sequence]\ninput_electrodes = [\"E1\", \"E2\", \"E3\"]\ncycles = 2\nread_noise = 0.001\n",
    )
    .unwrap();
    let via_file = dir.path().join("via-file");
    assert_eq!(run(&["sequence", s(&cfg), "-o", s(&via_file)]).0, exit::OK);
    let preset_cfg = dir.path().join("preset.toml");
    std::fs::write(
        &preset_cfg,
        std::fs::read_to_string(&cfg)
            .unwrap()
            .replace("topology = [\"grown/topology.json\"]", "preset = \"sequence-network\""),
    )
    .unwrap();
    let via_preset = dir.path().join("via-preset");
    assert_eq!(run(&["sequence", s(&preset_cfg), "-o", s(&via_preset)]).0, exit::OK);
    assert_eq!(
        std::fs::read(via_file.join("signature.csv")).unwrap(),
        std::fs::read(via_preset.join("signature.csv")).unwrap()
    );
}
