use dendrite_core::analysis::{extract_signature, signature_distance, signature_stats, SignatureStats};
use dendrite_core::presets::{self, SPATIAL_PROJECTIONS};
use dendrite_core::protocols::{delta_i_over_i, run_mac, run_sequence, SequenceProgram};
use dendrite_core::solver::{run_transient, DriveWaveform, Phase};
use dendrite_core::{BoundaryCondition, ElectrochemicalState, SimulationCell};
use proptest::prelude::*;

fn stats(cell: &SimulationCell, program: &SequenceProgram) -> SignatureStats {
    signature_stats(&extract_signature(&run_sequence(cell, program).unwrap()).unwrap()).unwrap()
}

fn demo() -> SimulationCell {
    presets::sequence_network(presets::DEMO_SEED).unwrap()
}

#[test]
fn dt_halving_moves_sampled_currents_by_less_than_a_tenth_percent() {
    let cell = demo();
    let program = presets::sequence_program(SPATIAL_PROJECTIONS[0].1);
    let mut write = BoundaryCondition::all_grounded(&cell);
    for (e, v) in program.input_electrodes.iter().zip([0.6, -0.6, 0.6]) {
        write.set(e, dendrite_core::Terminal::Fixed(v));
    }
    write.set("S", dendrite_core::Terminal::Floating);
    write.set("D", dendrite_core::Terminal::Floating);
    let read = BoundaryCondition::all_grounded(&cell).fixed("S", 0.1);
    let mut wave = DriveWaveform::default();
    wave.push(Phase::new("write", 10.0, write))
        .push(Phase::new("read", 0.05, read.clone()))
        .push(Phase::new("rest", 10.0, BoundaryCondition::all_grounded(&cell)))
        .push(Phase::new("probe", 0.05, read));
    // The largest step the sequence protocol takes, rounded so that the
    // 10 s phases split evenly.
    let dt = 10.0 / (10.0 / dendrite_core::device::stable_step(&cell)).ceil();
    let init = ElectrochemicalState::pristine(&cell);
    let (coarse, _) = run_transient(&cell, &wave, dt, &init).unwrap();
    let (fine, _) = run_transient(&cell, &wave, dt / 2.0, &init).unwrap();
    let columns = coarse.electrode_ids.len();
    let mut worst = 0.0f64;
    let mut matched = 0;
    for k in 0..coarse.len() {
        let Some(m) = fine.times.iter().position(|&t| (t - coarse.times[k]).abs() < 1e-9) else { continue };
        matched += 1;
        for c in 0..columns {
            let (a, b) = (coarse.current(k, c), fine.current(m, c));
            if a.abs().max(b.abs()) > 0.0 {
                worst = worst.max((a - b).abs() / a.abs().max(b.abs()));
            }
        }
    }
    assert!(matched > coarse.len() / 2);
    assert!(worst < 1e-3, "largest relative change {worst}");
}

#[test]
fn sequences_are_deterministic() {
    let cell = demo();
    let p = presets::sequence_program(SPATIAL_PROJECTIONS[1].1);
    let a = run_sequence(&cell, &p).unwrap();
    let b = run_sequence(&cell, &p).unwrap();
    assert_eq!(a.steps, b.steps);
    assert_eq!(a.trace, b.trace);
    assert_eq!(extract_signature(&a).unwrap(), extract_signature(&b).unwrap());
}

#[test]
fn zero_voltage_program_has_zero_signature() {
    let cell = demo();
    let p = SequenceProgram {
        high_voltage: 0.0,
        low_voltage: 0.0,
        read_noise: 0.0,
        cycles: 2,
        ..presets::sequence_program(SPATIAL_PROJECTIONS[0].1)
    };
    let memoryless = cell.with_device(cell.device.memoryless(50.0)).unwrap();
    let sig = extract_signature(&run_sequence(&memoryless, &p).unwrap()).unwrap();
    assert_eq!(sig.rows.len(), 2);
    for x in sig.rows.iter().flatten() {
        assert!(x.abs() < 1e-9, "{x}");
    }
    // With memory, the read bias alone leaves a slow drift far below any
    // pattern response.
    let sig = extract_signature(&run_sequence(&cell, &p).unwrap()).unwrap();
    for x in sig.rows.iter().flatten() {
        assert!(x.abs() < 1e-5, "{x}");
    }
}

#[test]
fn single_cycle_gives_one_row() {
    let cell = demo();
    let p = SequenceProgram { cycles: 1, warmup_cycles: 0, ..presets::sequence_program(SPATIAL_PROJECTIONS[0].1) };
    let sig = extract_signature(&run_sequence(&cell, &p).unwrap()).unwrap();
    assert_eq!(sig.rows.len(), 1);
    assert_eq!(sig.rows[0].len(), 8);
}

#[test]
fn cycles_reproduce_each_pattern() {
    // Patterns whose mean modulation is distinguishable from zero repeat to
    // within a fifth of their magnitude.
    let cell = demo();
    for (name, inputs) in SPATIAL_PROJECTIONS {
        let s = stats(&cell, &presets::sequence_program(inputs));
        assert_eq!(s.cycles, 5);
        for (j, (m, sd)) in s.mean.iter().zip(&s.std).enumerate() {
            if m.abs() >= 0.01 {
                assert!(*sd <= 0.2 * m.abs(), "{name} {}: mean {m}, std {sd}", s.patterns[j]);
            }
        }
    }
}

#[test]
fn order_matters_only_for_a_device_with_memory() {
    let cell = demo();
    let original = SequenceProgram { read_noise: 0.0, ..presets::sequence_program(SPATIAL_PROJECTIONS[0].1) };
    let shuffled = SequenceProgram { patterns: presets::shuffled_order(), ..original.clone() };

    let memoryless = cell.with_device(cell.device.memoryless(50.0)).unwrap();
    let a = stats(&memoryless, &original);
    let b = stats(&memoryless, &shuffled).reordered(&a.patterns).unwrap();
    for (x, y) in a.mean.iter().zip(&b.mean) {
        assert!((x - y).abs() < 1e-6, "memoryless device is order dependent: {x} vs {y}");
    }

    let noisy = SequenceProgram { read_noise: presets::DEMO_READ_NOISE, ..original };
    let a = stats(&cell, &noisy);
    let b =
        stats(&cell, &SequenceProgram { patterns: presets::shuffled_order(), ..noisy }).reordered(&a.patterns).unwrap();
    let d = signature_distance(&a, &b).unwrap();
    assert!(d > 3.0, "memoryful device is order independent: distance {d}");
}

#[test]
fn raw_baseline_drifts_down_with_traps() {
    let cell = demo();
    let p = SequenceProgram { read_noise: 0.0, ..presets::sequence_program(SPATIAL_PROJECTIONS[0].1) };
    let base = run_sequence(&cell, &p).unwrap().baseline_per_cycle();
    assert!(base.windows(2).all(|w| w[1] < w[0]), "{base:?}");
    let trap_free = cell.with_device(dendrite_core::DeviceParams { trap_rate: 0.0, ..cell.device.clone() }).unwrap();
    let flat = run_sequence(&trap_free, &p).unwrap().baseline_per_cycle();
    let drift = |b: &[f64]| (b[0] - b[b.len() - 1]) / b[0];
    assert!(drift(&flat) < drift(&base));
}

#[test]
fn mac_modulation_grows_with_the_active_subset() {
    let cell = presets::mac_cell().unwrap();
    let r = run_mac(&cell, &presets::mac_config()).unwrap();
    assert_eq!(r.entries.len(), 7);
    for a in &r.entries {
        for b in &r.entries {
            if a.subset.len() < b.subset.len() && a.subset.iter().all(|i| b.subset.contains(i)) {
                assert!(b.modulation >= a.modulation, "{} -> {}", a.label, b.label);
            }
        }
    }
    // Close to additive: the joint modulation stays near the sum of the parts.
    let single: f64 = (0..3).map(|i| r.modulation_of(&[i]).unwrap()).sum();
    let all = r.modulation_of(&[0, 1, 2]).unwrap();
    assert!((all / single - 1.0).abs() < 0.25, "all {all}, sum of singles {single}");
}

#[test]
fn input_pulse_dips_the_readout_then_recovers() {
    let cell = presets::mac_cell().unwrap();
    let read = BoundaryCondition::all_grounded(&cell).fixed("S", 0.1);
    let pulse = read.clone().fixed("IN3", 0.6);
    let mut wave = DriveWaveform::default();
    wave.push(Phase::new("before", 0.5, read.clone()))
        .push(Phase::new("pulse", 0.2, pulse))
        .push(Phase::new("after", 1.0, read));
    let dt = dendrite_core::device::stable_step(&cell).min(0.01);
    let (trace, _) = run_transient(&cell, &wave, dt, &ElectrochemicalState::pristine(&cell)).unwrap();
    let s = trace.electrode_column("S").unwrap();
    let i0 = trace.current(trace.phase_samples(1).start, s);
    let dip = trace.phase_samples(1).map(|k| trace.current(k, s)).fold(f64::INFINITY, f64::min);
    let last = trace.current(trace.len() - 1, s);
    assert!(dip < 0.95 * i0, "no dip: {dip} vs {i0}");
    assert!(last > dip && last <= i0 * (1.0 + 1e-9), "recovery {last} between {dip} and {i0}");
}

proptest! {
    #[test]
    fn delta_i_is_scale_invariant(read in -1.0f64..1.0, rest in 0.01f64..1.0, alpha in 1e-6f64..1e6, flip in any::<bool>()) {
        let alpha = if flip { -alpha } else { alpha };
        let a = delta_i_over_i(read, rest).unwrap();
        let b = delta_i_over_i(alpha * read, alpha * rest).unwrap();
        prop_assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()));
    }
}

#[test]
fn largest_rectification_grounds_the_core_electrode() {
    let cell = presets::y_device().unwrap();
    let table = dendrite_core::protocols::rectification_matrix(&cell, 0, 0.9, 0.05).unwrap();
    let best = table.iter().max_by(|a, b| a.coefficient.value().total_cmp(&b.coefficient.value())).unwrap();
    assert!(best.grounds.iter().any(|g| g == "C"), "largest is {}", best.label);
    let single = table
        .iter()
        .filter(|e| e.grounds.len() == 1)
        .max_by(|a, b| a.coefficient.value().total_cmp(&b.coefficient.value()))
        .unwrap();
    assert_eq!(single.label, "C-A");
}

fn symmetric_star() -> SimulationCell {
    use dendrite_core::topology::{ElectrodeRole, ElectrodeSpec, NetworkTopology, NodeId};
    let r = 200.0;
    let electrodes = (0..3)
        .map(|k| {
            let a = 2.0 * std::f64::consts::PI * k as f64 / 3.0;
            ElectrodeSpec::new(["A", "B", "C"][k], r * a.cos(), r * a.sin(), ElectrodeRole::Input)
        })
        .collect();
    let mut t = NetworkTopology::from_electrodes("star", electrodes);
    let c = t.add_junction(dendrite_core::geometry::Point::new(0.0, 0.0));
    for e in 0..3 {
        t.add_segment(NodeId(e), c, r, 4.0, 80.0);
    }
    dendrite_core::cell::assemble_cell(vec![t], presets::ELECTRODE_DL_CAPACITANCE).unwrap()
}

#[test]
fn symmetric_star_rectifies_only_under_shorted_grounds() {
    let table = dendrite_core::protocols::rectification_matrix(&symmetric_star(), 0, 0.9, 0.05).unwrap();
    assert_eq!(table.len(), 9);
    // One arm against one arm is mirror symmetric under polarity reversal.
    for e in table.iter().filter(|e| e.grounds.len() == 1) {
        assert!((e.coefficient.value() - 1.0).abs() < 1e-9, "{} {}", e.label, e.coefficient.value());
    }
    // Two shorted arms against one are not, but every rotation agrees.
    let shorted: Vec<f64> = table.iter().filter(|e| e.grounds.len() == 2).map(|e| e.coefficient.value()).collect();
    assert_eq!(shorted.len(), 3);
    assert!(shorted.iter().all(|c| (c - shorted[0]).abs() < 1e-9 * shorted[0] && *c > 1.0), "{shorted:?}");
}

#[test]
fn shorted_ground_order_does_not_matter() {
    use dendrite_core::protocols::{run_output_sweep, SweepConfig};
    let cell = presets::y_device().unwrap();
    let sweep = |grounds: &[&str]| {
        let config = SweepConfig {
            swept: vec!["A".into()],
            grounds: grounds.iter().map(|g| g.to_string()).collect(),
            start: -0.9,
            end: 0.9,
            step: 0.1,
            dc: Default::default(),
        };
        run_output_sweep(&cell, &config).unwrap()
    };
    assert_eq!(sweep(&["B", "C", "D"]), sweep(&["D", "B", "C"]));
}
