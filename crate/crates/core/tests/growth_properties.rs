use std::collections::BTreeSet;

use dendrite_core::presets::{self, NETWORK_ELECTRODES};
use dendrite_core::topology::{grow_network, radius_from_frequency, validate_topology};
use dendrite_core::{ElectrodeRole, ElectrodeSpec, GrowthParams};
use proptest::prelude::*;

fn ring() -> Vec<ElectrodeSpec> {
    let mut e: Vec<ElectrodeSpec> = NETWORK_ELECTRODES
        .iter()
        .enumerate()
        .map(|(i, id)| {
            let a = std::f64::consts::TAU * i as f64 / 8.0;
            ElectrodeSpec::new(*id, 300.0 * a.cos(), 300.0 * a.sin(), ElectrodeRole::Input)
                .growing_toward(NETWORK_ELECTRODES[(i + 3) % 8])
        })
        .collect();
    e.push(ElectrodeSpec::new("S", -80.0, 0.0, ElectrodeRole::OutputSource).growing_toward("D"));
    e.push(ElectrodeSpec::new("D", 80.0, 0.0, ElectrodeRole::OutputDrain));
    e
}

fn canonical(seed: u64) -> String {
    let p = GrowthParams { seed, ..GrowthParams::default() };
    let t = grow_network("ring", &ring(), &p).unwrap();
    serde_json::to_string(&(&t.nodes, &t.segments)).unwrap()
}

#[test]
fn hundred_seeds_give_hundred_distinct_networks() {
    let all: BTreeSet<String> = (0..100).map(canonical).collect();
    assert_eq!(all.len(), 100);
}

#[test]
fn regrowth_is_byte_identical() {
    for seed in [0, 7, presets::DEMO_SEED] {
        assert_eq!(canonical(seed), canonical(seed));
    }
}

#[test]
fn every_grown_network_validates() {
    for seed in 0..40 {
        let p = GrowthParams { seed, ..GrowthParams::default() };
        let t = grow_network("ring", &ring(), &p).unwrap();
        let issues = validate_topology(&t);
        assert!(issues.is_empty(), "seed {seed}: {issues:?}");
        for s in &t.segments {
            assert!(s.length_um > 0.0 && s.radius_um > 0.0 && s.endpoints[0] != s.endpoints[1]);
        }
    }
}

#[test]
fn demo_networks_validate() {
    let cells =
        [presets::sequence_network(presets::DEMO_SEED).unwrap(), presets::twin_networks(presets::DEMO_SEED).unwrap()];
    for cell in cells {
        for t in &cell.topologies {
            assert!(validate_topology(t).is_empty(), "{}", t.name);
        }
    }
}

#[test]
fn twin_networks_differ_in_thickness() {
    let cell = presets::twin_networks(presets::DEMO_SEED).unwrap();
    let radii: BTreeSet<u64> = cell.topologies[0].segments.iter().map(|s| s.radius_um.to_bits()).collect();
    let g = GrowthParams::default();
    let thick = radius_from_frequency(80.0, &g).unwrap();
    let thin = radius_from_frequency(500.0, &g).unwrap();
    assert!(radii.contains(&thick.to_bits()) && radii.contains(&thin.to_bits()));
}

proptest! {
    #[test]
    fn thinner_at_higher_frequency(
        f1 in 1.0f64..1000.0,
        ratio in 1.001f64..50.0,
        r0 in 0.5f64..20.0,
        f0 in 5.0f64..500.0,
        k in 0.05f64..2.0,
    ) {
        let p = GrowthParams {
            reference_radius_um: r0,
            reference_frequency_hz: f0,
            thinning_exponent: k,
            ..GrowthParams::default()
        };
        let a = radius_from_frequency(f1, &p).unwrap();
        let b = radius_from_frequency(f1 * ratio, &p).unwrap();
        prop_assert!(a > b);
        prop_assert!(radius_from_frequency(25.0, &p).unwrap() > radius_from_frequency(200.0, &p).unwrap());
    }

    #[test]
    fn growth_is_deterministic_for_any_seed(seed in any::<u64>()) {
        let p = GrowthParams { seed, step_budget: 60, ..GrowthParams::default() };
        let a = grow_network("ring", &ring(), &p).unwrap();
        let b = grow_network("ring", &ring(), &p).unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert!(validate_topology(&a).is_empty());
    }
}
