use proptest::prelude::*;

use uwoan::scenario::{
    aggregate, export_topology, generate, parse_topology_json, sweep, sweep_csv, ScenarioError, SimConfig,
    SimReport, TopologyFormat,
};
use uwoan::sim_engine;

/// Pearson chi-square statistic of `samples` in `[0, width)` over `bins` equal bins.
fn chi_square(samples: &[f64], width: f64, bins: usize) -> f64 {
    let mut counts = vec![0usize; bins];
    for &s in samples {
        counts[((s / width * bins as f64) as usize).min(bins - 1)] += 1;
    }
    let expected = samples.len() as f64 / bins as f64;
    counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum()
}

#[test]
fn deployment_marginals_uniform() {
    let cfg = SimConfig { n_uwn: 100_000, ..SimConfig::default() };
    let world = generate(&cfg, 2024);
    // Critical value of chi-square with 19 degrees of freedom at p = 0.001.
    let critical = 43.82;
    let east: Vec<f64> = world.bodies.iter().map(|b| b.origin.east).collect();
    let north: Vec<f64> = world.bodies.iter().map(|b| b.origin.north).collect();
    let depth: Vec<f64> = world.bodies.iter().map(|b| b.origin.depth).collect();
    for (name, xs, w) in [("east", east, 200.0), ("north", north, 200.0), ("depth", depth, 200.0)] {
        assert!(xs.iter().all(|&x| (0.0..w).contains(&x)));
        let stat = chi_square(&xs, w, 20);
        assert!(stat < critical, "{name}: {stat}");
    }
}

fn small() -> SimConfig {
    SimConfig { n_uwn: 8, ..SimConfig::default() }
}

#[test]
fn aggregate_single_and_permuted() {
    let r = sim_engine::run(&small(), 3).unwrap();
    let s = aggregate(std::slice::from_ref(&r)).unwrap();
    assert_eq!(s.len(), 1);
    assert_eq!(s[0].access_rate.mean, r.access_rate);
    assert_eq!(s[0].max_decomp_delay.mean, r.max_decomp_delay);
    assert_eq!(s[0].access_rate.std, 0.0);

    let mut reports = sweep(&small(), &[0.12, 0.056], 5, 1).unwrap();
    let forward = aggregate(&reports).unwrap();
    reports.reverse();
    reports.swap(1, 7);
    assert_eq!(aggregate(&reports).unwrap(), forward);
    assert_eq!(forward.iter().map(|s| s.c0).collect::<Vec<_>>(), vec![0.056, 0.12]);
    assert!(matches!(aggregate(&[]), Err(ScenarioError::Empty)));
}

#[test]
fn aggregate_rejects_mixed_configs() {
    let a = sim_engine::run(&small(), 1).unwrap();
    let b = sim_engine::run(&SimConfig { n_uwn: 9, ..SimConfig::default() }, 2).unwrap();
    assert!(matches!(aggregate(&[a, b]), Err(ScenarioError::MixedConfigs(_))));
}

#[test]
fn csv_row_counts() {
    let reports = sweep(&small(), &[0.056, 0.12, 0.151], 4, 0).unwrap();
    let csv = sweep_csv(&reports).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "c0,seed,access_rate,dual_hop_rate,avg_sound_delay_s,max_decomp_delay_s,n_failed,n_unresolved");
    assert_eq!(lines.len(), 1 + 12 + 3);
    assert_eq!(lines.iter().filter(|l| l.split(',').nth(1) == Some("mean")).count(), 3);
}

#[test]
fn topology_of_empty_report() {
    let r = sim_engine::run(&SimConfig { n_uwn: 0, ..SimConfig::default() }, 0).unwrap();
    let topo = parse_topology_json(&export_topology(&r, TopologyFormat::Json)).unwrap();
    assert_eq!(topo.nodes.len(), 1);
    assert_eq!(topo.nodes[0].id, "bs");
    assert!(topo.edges.is_empty());
    let dot = export_topology(&r, TopologyFormat::Dot);
    assert!(dot.starts_with("digraph uwoan {") && dot.contains("\"bs\" [shape=box"));
}

#[test]
fn topology_of_single_direct_node() {
    let r = sim_engine::run(&SimConfig { n_uwn: 1, ..SimConfig::default() }, 4).unwrap();
    assert_eq!(r.n_accessed, 1);
    let topo = parse_topology_json(&export_topology(&r, TopologyFormat::Json)).unwrap();
    assert_eq!(topo.edges.len(), 1);
    assert_eq!((topo.edges[0].from.as_str(), topo.edges[0].to.as_str(), topo.edges[0].hop), ("uwn:0", "bs", 1));
    assert!(export_topology(&r, TopologyFormat::Dot).contains("\"uwn:0\" -> \"bs\" [hop=1];"));
}

#[test]
fn report_json_round_trip() {
    let r = sim_engine::run(&SimConfig { c0: 0.12, ..SimConfig::default() }, 8).unwrap();
    let back: SimReport = serde_json::from_str(&r.to_json()).unwrap();
    assert_eq!(back, r);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn report_invariants(seed in 0u64..10_000, c_idx in 0usize..3, n in 0usize..40) {
        let c0 = [0.056, 0.12, 0.151][c_idx];
        let r = sim_engine::run(&SimConfig { c0, n_uwn: n, ..SimConfig::default() }, seed).unwrap();
        prop_assert!(0.0 <= r.dual_hop_rate && r.dual_hop_rate <= r.access_rate && r.access_rate <= 1.0);
        prop_assert_eq!(r.n_accessed + r.n_failed + r.n_dormant + r.n_unresolved, n);
        prop_assert!(r.invariant_violation.is_none());
        let topo = parse_topology_json(&export_topology(&r, TopologyFormat::Json)).unwrap();
        prop_assert_eq!(topo.edges, r.edges);
    }
}
