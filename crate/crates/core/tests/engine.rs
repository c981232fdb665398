use std::collections::{BTreeMap, BTreeSet};

use uwoan::geometry::Position;
use uwoan::scenario::{self, Outcome, SimConfig};
use uwoan::sim_engine::{self, format_trace, run_world, World};
use uwoan::uwn_protocol::Lifecycle;

#[test]
fn empty_population() {
    let cfg = SimConfig { n_uwn: 0, ..SimConfig::default() };
    let report = sim_engine::run(&cfg, 1).unwrap();
    assert_eq!(report.access_rate, 1.0);
    assert_eq!(report.dual_hop_rate, 0.0);
    assert!(report.edges.is_empty() && report.nodes.is_empty());
}

#[test]
fn same_seed_same_trace() {
    let cfg = SimConfig { c0: 0.12, ..SimConfig::default() };
    let (r1, t1) = sim_engine::trace(&cfg, 5).unwrap();
    let (r2, t2) = sim_engine::trace(&cfg, 5).unwrap();
    assert_eq!(format_trace(&t1), format_trace(&t2));
    assert_eq!(r1.to_json(), r2.to_json());
    assert_eq!(r1, sim_engine::run(&cfg, 5).unwrap());
    let (_, t3) = sim_engine::trace(&cfg, 6).unwrap();
    assert_ne!(format_trace(&t1), format_trace(&t3));
}

#[test]
fn trigger_arrivals_differ_by_path_length() {
    let cfg = SimConfig::default();
    let engine = cfg.engine().unwrap();
    let positions = [
        Position::new(100.0, 100.0, 20.0),
        Position::new(10.0, 30.0, 180.0),
        Position::new(190.0, 150.0, 75.0),
    ];
    let world = World::new(cfg.bs_position(), cfg.region(), &positions);
    let out = run_world(world, &engine, scenario::run_rng(0), true);
    let first: BTreeMap<String, f64> = out
        .trace
        .iter()
        .filter(|e| e.kind == "ACOUSTIC_ARRIVAL" && e.field("sent") == Some("0"))
        .map(|e| (e.subject.clone(), e.time))
        .collect();
    let bs = cfg.bs_position();
    for (i, p) in positions.iter().enumerate() {
        for (j, q) in positions.iter().enumerate() {
            let expected = (bs.distance_to(q) - bs.distance_to(p)) / 1500.0;
            let got = first[&format!("uwn:{j}")] - first[&format!("uwn:{i}")];
            assert!((got - expected).abs() < 1e-12);
        }
    }
}

#[test]
fn outcomes_partition_population() {
    for (seed, c0) in [(1, 0.056), (2, 0.12), (3, 0.151)] {
        let cfg = SimConfig { c0, ..SimConfig::default() };
        let r = sim_engine::run(&cfg, seed).unwrap();
        assert_eq!(r.n_accessed + r.n_failed + r.n_dormant + r.n_unresolved, r.n_uwn);
        assert!(0.0 <= r.dual_hop_rate && r.dual_hop_rate <= r.access_rate && r.access_rate <= 1.0);
        assert!(r.invariant_violation.is_none(), "{:?}", r.invariant_violation);
        assert!(r.avg_sound_delay > 0.0 && r.avg_sound_delay < 250.0 / 1500.0);
    }
}

#[test]
fn relayed_edges_match_node_outcomes() {
    let cfg = SimConfig { c0: 0.12, ..SimConfig::default() };
    let mut relayed = 0;
    for seed in 0..5 {
        let r = sim_engine::run(&cfg, seed).unwrap();
        let by_id: BTreeMap<&str, &scenario::NodeReport> = r.nodes.iter().map(|n| (n.id.as_str(), n)).collect();
        let mut relays = BTreeSet::new();
        for e in &r.edges {
            let from = by_id[e.from.as_str()];
            assert_eq!(from.outcome, Outcome::Accessed);
            if e.hop == 2 {
                relayed += 1;
                assert!(from.via_relay);
                assert_eq!(from.relay.as_deref(), Some(e.to.as_str()));
                let relay = by_id[e.to.as_str()];
                assert_eq!(relay.outcome, Outcome::Accessed);
                assert!(!relay.via_relay);
                assert!(r.edges.iter().any(|x| x.from == e.to && x.to == "bs" && x.hop == 1));
                assert!(relays.insert(e.to.clone()), "relay fan-in above one");
            } else {
                assert_eq!(e.to, "bs");
            }
        }
        assert_eq!(r.edges.len(), r.n_accessed);
    }
    assert!(relayed > 0);
}

#[test]
fn unreachable_node_fails() {
    // Strong attenuation and a single node far from the BS: no direct link,
    // no relay candidate.
    let cfg = SimConfig { c0: 0.5, ..SimConfig::default() };
    let engine = cfg.engine().unwrap();
    let world = World::new(cfg.bs_position(), cfg.region(), &[Position::new(0.0, 0.0, 190.0)]);
    let out = run_world(world, &engine, scenario::run_rng(0), false);
    assert_eq!(out.nodes[0].lifecycle, Lifecycle::Failed);
    assert!(out.invariant_violation.is_none());
}

#[test]
fn frame_loss_slows_but_keeps_invariants() {
    let cfg = SimConfig { n_uwn: 20, p_frame_loss: 0.3, ..SimConfig::default() };
    let r = sim_engine::run(&cfg, 9).unwrap();
    assert!(r.invariant_violation.is_none());
    assert!(r.n_accessed > 0);
}
