//! Configuration, deployment generation, per-run metrics, aggregation over
//! seeds and topology export.
//!
//! The config file is flat `key = value` text with `#` comments. Every key is
//! optional and unknown keys are rejected.

use std::fmt::Write as _;
use std::io;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bs_protocol::{BsConfig, SonarModel};
use crate::channel::{OpticalLinkBudget, WaterProfile, DEFAULT_RX_SENSITIVITY};
use crate::geometry::{DepthAccuracy, Position};
use crate::sim_engine::{self, node_of_id, EngineConfig, RunOutput, World};
use crate::uwn_protocol::{BeamTarget, Lifecycle, UwnConfig};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("unknown topology format `{0}` (expected json or dot)")]
    UnknownFormat(String),
    #[error("reports for c0 = {0} come from different configurations")]
    MixedConfigs(f64),
    #[error("nothing to aggregate")]
    Empty,
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

/// All tunables of one scenario. Field names are the config keys.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub n_uwn: usize,
    pub region_east: f64,
    pub region_north: f64,
    pub region_depth: f64,
    pub bs_east: f64,
    pub bs_north: f64,

    /// Surface attenuation coefficient, 1/m.
    pub c0: f64,
    /// Attenuation gradient with depth, 1/m².
    pub gamma: f64,
    pub sound_speed: f64,

    pub tx_power_w: f64,
    pub divergence_deg: f64,
    pub rx_aperture_m2: f64,
    pub rx_sensitivity_w: f64,
    pub rx_fov_deg: f64,
    pub bs_fov_deg: f64,

    pub t_max: f64,
    pub superframe_period: f64,
    pub first_ping: f64,
    pub first_superframe: f64,
    pub acoustic_range: f64,

    pub sonar_radius: f64,
    pub p_misdetect: f64,
    pub depth_noise: f64,
    pub depth_base: f64,
    pub depth_slope: f64,

    pub direct_retries: u32,
    pub relay_retries: u32,
    pub t_round: f64,

    pub v_min: f64,
    pub v_max: f64,
    pub move_t_min: f64,
    pub move_t_max: f64,
    pub v_return: f64,
    pub return_tolerance: f64,
    pub movement_marker: bool,

    pub p_frame_loss: f64,
    pub relay_delay: f64,
    pub current_east: f64,
    pub current_north: f64,

    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        let budget = OpticalLinkBudget::default();
        let uwn = UwnConfig::default();
        let bs = BsConfig::default();
        let depth = DepthAccuracy::default();
        Self {
            n_uwn: 50,
            region_east: 200.0,
            region_north: 200.0,
            region_depth: 200.0,
            bs_east: 100.0,
            bs_north: 100.0,
            c0: 0.056,
            gamma: 0.0,
            sound_speed: 1500.0,
            tx_power_w: budget.tx_power,
            divergence_deg: 1.0,
            rx_aperture_m2: budget.rx_aperture_area,
            rx_sensitivity_w: DEFAULT_RX_SENSITIVITY,
            rx_fov_deg: 30.0,
            bs_fov_deg: 90.0,
            t_max: 50.0,
            superframe_period: 1.0,
            first_ping: 0.0,
            first_superframe: 0.1,
            acoustic_range: 1000.0,
            sonar_radius: 1000.0,
            p_misdetect: 0.0,
            depth_noise: 0.0,
            depth_base: depth.base,
            depth_slope: depth.slope,
            direct_retries: bs.direct_retries,
            relay_retries: bs.relay_retries,
            t_round: bs.t_round,
            v_min: uwn.v_min,
            v_max: uwn.v_max,
            move_t_min: uwn.t_min,
            move_t_max: uwn.t_max,
            v_return: uwn.v_return,
            return_tolerance: uwn.return_tolerance,
            movement_marker: uwn.use_movement_marker,
            p_frame_loss: 0.0,
            relay_delay: 0.0,
            current_east: 0.0,
            current_north: 0.0,
            seed: 0,
        }
    }
}

fn invalid(msg: impl Into<String>) -> ScenarioError {
    ScenarioError::Invalid(msg.into())
}

impl SimConfig {
    pub fn parse(text: &str) -> Result<Self, ScenarioError> {
        let cfg: SimConfig = toml::from_str(text).map_err(|e| ScenarioError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ScenarioError::Io { path: path.to_path_buf(), source })?;
        Self::parse(&text)
    }

    /// Flat `key = value` rendering that [`SimConfig::parse`] reads back.
    pub fn to_text(&self) -> String {
        toml::to_string(self).expect("flat config always serializes")
    }

    pub fn region(&self) -> [f64; 3] {
        [self.region_east, self.region_north, self.region_depth]
    }

    pub fn bs_position(&self) -> Position {
        Position::new(self.bs_east, self.bs_north, 0.0)
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let finite = [
            ("region_east", self.region_east),
            ("region_north", self.region_north),
            ("region_depth", self.region_depth),
            ("bs_east", self.bs_east),
            ("bs_north", self.bs_north),
            ("c0", self.c0),
            ("gamma", self.gamma),
            ("t_max", self.t_max),
            ("first_ping", self.first_ping),
            ("first_superframe", self.first_superframe),
            ("relay_delay", self.relay_delay),
            ("current_east", self.current_east),
            ("current_north", self.current_north),
        ];
        for (k, v) in finite {
            if !v.is_finite() {
                return Err(invalid(format!("{k} must be finite")));
            }
        }
        for (k, v) in [
            ("region_east", self.region_east),
            ("region_north", self.region_north),
            ("region_depth", self.region_depth),
            ("t_max", self.t_max),
            ("superframe_period", self.superframe_period),
            ("sound_speed", self.sound_speed),
            ("acoustic_range", self.acoustic_range),
            ("sonar_radius", self.sonar_radius),
            ("depth_base", self.depth_base),
            ("v_max", self.v_max),
            ("move_t_max", self.move_t_max),
            ("t_round", self.t_round),
        ] {
            if !(v > 0.0) {
                return Err(invalid(format!("{k} must be > 0, got {v}")));
            }
        }
        for (k, v) in [
            ("depth_slope", self.depth_slope),
            ("depth_noise", self.depth_noise),
            ("v_min", self.v_min),
            ("move_t_min", self.move_t_min),
            ("v_return", self.v_return),
            ("return_tolerance", self.return_tolerance),
            ("first_ping", self.first_ping),
            ("first_superframe", self.first_superframe),
            ("relay_delay", self.relay_delay),
        ] {
            if !(v >= 0.0) {
                return Err(invalid(format!("{k} must be >= 0, got {v}")));
            }
        }
        for (k, v) in [("p_misdetect", self.p_misdetect), ("p_frame_loss", self.p_frame_loss)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(invalid(format!("{k} must lie in [0, 1], got {v}")));
            }
        }
        if self.v_min > self.v_max {
            return Err(invalid("v_min exceeds v_max"));
        }
        if self.move_t_min > self.move_t_max {
            return Err(invalid("move_t_min exceeds move_t_max"));
        }
        if !(0.0..=self.region_east).contains(&self.bs_east) || !(0.0..=self.region_north).contains(&self.bs_north) {
            return Err(invalid("bs must sit on the surface face of the region"));
        }
        if self.n_uwn > crate::acoustic_frame::MAX_NETWORK_ID as usize {
            return Err(invalid(format!(
                "n_uwn {} exceeds the {} network ids available",
                self.n_uwn,
                crate::acoustic_frame::MAX_NETWORK_ID
            )));
        }
        if !(self.bs_fov_deg > 0.0 && self.bs_fov_deg <= 180.0) {
            return Err(invalid("bs_fov_deg must lie in (0, 180]"));
        }
        self.budget().validate().map_err(|e| invalid(e.to_string()))?;
        self.profile().validate(self.region_depth).map_err(|e| invalid(e.to_string()))?;
        Ok(())
    }

    pub fn profile(&self) -> WaterProfile {
        WaterProfile { c0: self.c0, gamma: self.gamma, sound_speed: self.sound_speed }
    }

    pub fn budget(&self) -> OpticalLinkBudget {
        OpticalLinkBudget {
            tx_power: self.tx_power_w,
            divergence_half_angle: self.divergence_deg.to_radians(),
            rx_aperture_area: self.rx_aperture_m2,
            rx_sensitivity: self.rx_sensitivity_w,
            rx_fov_half_angle: self.rx_fov_deg.to_radians(),
        }
    }

    pub fn engine(&self) -> Result<EngineConfig, ScenarioError> {
        self.validate()?;
        let depth_model = DepthAccuracy { base: self.depth_base, slope: self.depth_slope };
        Ok(EngineConfig {
            t_max: self.t_max,
            superframe_period: self.superframe_period,
            first_ping: self.first_ping,
            first_superframe: self.first_superframe,
            acoustic_range: self.acoustic_range,
            sonar: SonarModel {
                radius: self.sonar_radius,
                p_misdetect: self.p_misdetect,
                depth_noise: self.depth_noise,
                depth_model,
            },
            profile: self.profile(),
            budget: self.budget(),
            bs_fov_half_angle: self.bs_fov_deg.to_radians(),
            bs: BsConfig {
                direct_retries: self.direct_retries,
                relay_retries: self.relay_retries,
                t_round: self.t_round,
            },
            uwn: UwnConfig {
                v_min: self.v_min,
                v_max: self.v_max,
                t_min: self.move_t_min,
                t_max: self.move_t_max,
                v_return: self.v_return,
                return_tolerance: self.return_tolerance,
                use_movement_marker: self.movement_marker,
                depth_model,
                region_depth: self.region_depth,
            },
            p_frame_loss: self.p_frame_loss,
            relay_delay: self.relay_delay,
            current: [self.current_east, self.current_north],
            region: self.region(),
        })
    }

    /// Stable hash of every setting except `c0` and `seed`, used to check
    /// that reports grouped together come from the same scenario.
    pub fn fingerprint(&self) -> String {
        let mut base = self.clone();
        base.c0 = 0.0;
        base.seed = 0;
        let text = serde_json::to_string(&base).expect("config serializes");
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in text.bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
        format!("{h:016x}")
    }
}

/// The single generator that drives deployment and then the whole run.
pub fn run_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Node positions i.i.d. uniform over the region box.
pub fn generate(config: &SimConfig, seed: u64) -> World {
    generate_with(config, &mut run_rng(seed))
}

pub fn generate_with<R: Rng + ?Sized>(config: &SimConfig, rng: &mut R) -> World {
    let positions: Vec<Position> = (0..config.n_uwn)
        .map(|_| {
            let e = rng.gen_range(0.0..config.region_east);
            let n = rng.gen_range(0.0..config.region_north);
            let d = rng.gen_range(0.0..config.region_depth);
            Position::new(e, n, d)
        })
        .collect();
    World::new(config.bs_position(), config.region(), &positions)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Accessed,
    Failed,
    Dormant,
    /// Still matching, moving or waiting for confirmation at `t_max`.
    Unresolved,
}

impl Outcome {
    pub fn as_str(self) -> &'static str {
        match self {
            Outcome::Accessed => "accessed",
            Outcome::Failed => "failed",
            Outcome::Dormant => "dormant",
            Outcome::Unresolved => "unresolved",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeReport {
    pub id: String,
    pub network_id: Option<u16>,
    pub x: f64,
    pub y: f64,
    pub depth: f64,
    pub initial_depth: f64,
    pub outcome: Outcome,
    pub via_relay: bool,
    pub relay: Option<String>,
    pub access_time: Option<f64>,
    pub decomp_delay: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Edge {
    pub from: String,
    pub to: String,
    pub hop: u8,
}

pub const BS_LABEL: &str = "bs";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub seed: u64,
    pub c0: f64,
    pub config_fingerprint: String,
    pub n_uwn: usize,
    pub end_time: f64,
    pub access_rate: f64,
    pub dual_hop_rate: f64,
    /// Mean one-way BS-to-node acoustic delay over all deliveries, s.
    pub avg_sound_delay: f64,
    /// Longest total time any node spent moving to resolve a conflict, s.
    pub max_decomp_delay: f64,
    pub n_accessed: usize,
    pub n_dual_hop: usize,
    pub n_failed: usize,
    pub n_dormant: usize,
    pub n_unresolved: usize,
    pub acoustic_deliveries: u64,
    pub invariant_violation: Option<String>,
    pub bs: Position,
    pub nodes: Vec<NodeReport>,
    pub edges: Vec<Edge>,
}

impl SimReport {
    pub fn from_output(config: &SimConfig, seed: u64, out: &RunOutput) -> Self {
        let end = out.end_time;
        let mut nodes = Vec::with_capacity(out.nodes.len());
        let mut edges = Vec::new();
        for (i, state) in out.nodes.iter().enumerate() {
            let label = format!("uwn:{i}");
            let outcome = match state.lifecycle {
                Lifecycle::Accessed => Outcome::Accessed,
                Lifecycle::Failed => Outcome::Failed,
                Lifecycle::Dormant => Outcome::Dormant,
                _ => Outcome::Unresolved,
            };
            let relay = match (outcome, state.uplink) {
                (Outcome::Accessed, BeamTarget::Relay(id)) if state.via_relay => {
                    node_of_id(&out.nodes, id).map(|j| format!("uwn:{j}"))
                }
                _ => None,
            };
            if outcome == Outcome::Accessed {
                match &relay {
                    Some(r) => edges.push(Edge { from: label.clone(), to: r.clone(), hop: 2 }),
                    None => edges.push(Edge { from: label.clone(), to: BS_LABEL.into(), hop: 1 }),
                }
            }
            let p = out.world.position_at(i, end, [config.current_east, config.current_north]);
            nodes.push(NodeReport {
                id: label,
                network_id: state.matched_id,
                x: p.east,
                y: p.north,
                depth: p.depth,
                initial_depth: out.world.bodies[i].origin.depth,
                outcome,
                via_relay: outcome == Outcome::Accessed && state.via_relay,
                relay,
                access_time: state.confirmed_at,
                decomp_delay: state.decomposition_time(end),
            });
        }
        let count = |o: Outcome| nodes.iter().filter(|n| n.outcome == o).count();
        let n = nodes.len();
        let n_accessed = count(Outcome::Accessed);
        let n_dual_hop = nodes.iter().filter(|n| n.via_relay).count();
        let rate = |k: usize| if n == 0 { 1.0 } else { k as f64 / n as f64 };
        Self {
            seed,
            c0: config.c0,
            config_fingerprint: config.fingerprint(),
            n_uwn: n,
            end_time: end,
            access_rate: rate(n_accessed),
            dual_hop_rate: if n == 0 { 0.0 } else { rate(n_dual_hop) },
            avg_sound_delay: if out.acoustic_deliveries == 0 {
                0.0
            } else {
                out.acoustic_delay_sum / out.acoustic_deliveries as f64
            },
            max_decomp_delay: nodes.iter().map(|n| n.decomp_delay).fold(0.0, f64::max),
            n_accessed,
            n_dual_hop,
            n_failed: count(Outcome::Failed),
            n_dormant: count(Outcome::Dormant),
            n_unresolved: count(Outcome::Unresolved),
            acoustic_deliveries: out.acoustic_deliveries,
            invariant_violation: out.invariant_violation.clone(),
            bs: out.world.bs_position,
            nodes,
            edges,
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
}

fn stat(values: &[f64]) -> Stat {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() < 2 {
        0.0
    } else {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    };
    Stat { mean, std }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub c0: f64,
    pub runs: usize,
    pub access_rate: Stat,
    pub dual_hop_rate: Stat,
    pub avg_sound_delay: Stat,
    pub max_decomp_delay: Stat,
    pub n_failed: Stat,
    pub n_unresolved: Stat,
}

/// Mean and sample standard deviation per metric, one row per `c0`, in
/// ascending `c0`. Input order does not matter.
pub fn aggregate(reports: &[SimReport]) -> Result<Vec<Summary>, ScenarioError> {
    if reports.is_empty() {
        return Err(ScenarioError::Empty);
    }
    let mut sorted: Vec<&SimReport> = reports.iter().collect();
    sorted.sort_by(|a, b| a.c0.total_cmp(&b.c0).then(a.seed.cmp(&b.seed)));
    let mut out = Vec::new();
    for group in sorted.chunk_by(|a, b| a.c0.total_cmp(&b.c0).is_eq()) {
        let fp = &group[0].config_fingerprint;
        if group.iter().any(|r| &r.config_fingerprint != fp) {
            return Err(ScenarioError::MixedConfigs(group[0].c0));
        }
        let col = |f: fn(&SimReport) -> f64| stat(&group.iter().map(|r| f(r)).collect::<Vec<_>>());
        out.push(Summary {
            c0: group[0].c0,
            runs: group.len(),
            access_rate: col(|r| r.access_rate),
            dual_hop_rate: col(|r| r.dual_hop_rate),
            avg_sound_delay: col(|r| r.avg_sound_delay),
            max_decomp_delay: col(|r| r.max_decomp_delay),
            n_failed: col(|r| r.n_failed as f64),
            n_unresolved: col(|r| r.n_unresolved as f64),
        });
    }
    Ok(out)
}

/// Runs every `(c0, seed)` pair, `seeds` seeds per value starting at 0, on
/// `threads` workers (0 = rayon default). Results are sorted by
/// `(c0, seed)` whatever the thread count.
pub fn sweep(config: &SimConfig, c_list: &[f64], seeds: u64, threads: usize) -> Result<Vec<SimReport>, ScenarioError> {
    let mut configs = Vec::with_capacity(c_list.len());
    for &c0 in c_list {
        let cfg = SimConfig { c0, ..config.clone() };
        cfg.validate()?;
        configs.push(cfg);
    }
    let jobs: Vec<(&SimConfig, u64)> =
        configs.iter().flat_map(|c| (0..seeds).map(move |s| (c, s))).collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| invalid(format!("thread pool: {e}")))?;
    let mut reports: Vec<SimReport> = pool.install(|| {
        jobs.par_iter().map(|&(cfg, seed)| sim_engine::run(cfg, seed)).collect::<Result<Vec<_>, _>>()
    })?;
    reports.sort_by(|a, b| a.c0.total_cmp(&b.c0).then(a.seed.cmp(&b.seed)));
    Ok(reports)
}

pub const CSV_HEADER: [&str; 8] = [
    "c0",
    "seed",
    "access_rate",
    "dual_hop_rate",
    "avg_sound_delay_s",
    "max_decomp_delay_s",
    "n_failed",
    "n_unresolved",
];

/// One row per run in `(c0, seed)` order, then one `seed = mean` row per c0.
pub fn sweep_csv(reports: &[SimReport]) -> Result<String, ScenarioError> {
    let summaries = aggregate(reports)?;
    let mut sorted: Vec<&SimReport> = reports.iter().collect();
    sorted.sort_by(|a, b| a.c0.total_cmp(&b.c0).then(a.seed.cmp(&b.seed)));
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CSV_HEADER)?;
    for r in sorted {
        w.write_record([
            r.c0.to_string(),
            r.seed.to_string(),
            r.access_rate.to_string(),
            r.dual_hop_rate.to_string(),
            r.avg_sound_delay.to_string(),
            r.max_decomp_delay.to_string(),
            r.n_failed.to_string(),
            r.n_unresolved.to_string(),
        ])?;
    }
    for s in summaries {
        w.write_record([
            s.c0.to_string(),
            "mean".to_string(),
            s.access_rate.mean.to_string(),
            s.dual_hop_rate.mean.to_string(),
            s.avg_sound_delay.mean.to_string(),
            s.max_decomp_delay.mean.to_string(),
            s.n_failed.mean.to_string(),
            s.n_unresolved.mean.to_string(),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| invalid(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TopologyFormat {
    Json,
    Dot,
}

impl FromStr for TopologyFormat {
    type Err = ScenarioError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "json" => Ok(TopologyFormat::Json),
            "dot" => Ok(TopologyFormat::Dot),
            other => Err(ScenarioError::UnknownFormat(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopologyNode {
    pub id: String,
    pub x: f64,
    pub y: f64,
    pub depth: f64,
    pub outcome: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Topology {
    pub nodes: Vec<TopologyNode>,
    pub edges: Vec<Edge>,
}

impl Topology {
    pub fn of(report: &SimReport) -> Self {
        let mut nodes = vec![TopologyNode {
            id: BS_LABEL.into(),
            x: report.bs.east,
            y: report.bs.north,
            depth: report.bs.depth,
            outcome: BS_LABEL.into(),
        }];
        nodes.extend(report.nodes.iter().map(|n| TopologyNode {
            id: n.id.clone(),
            x: n.x,
            y: n.y,
            depth: n.depth,
            outcome: n.outcome.as_str().into(),
        }));
        Self { nodes, edges: report.edges.clone() }
    }
}

pub fn export_topology(report: &SimReport, format: TopologyFormat) -> String {
    let topo = Topology::of(report);
    match format {
        TopologyFormat::Json => {
            let mut s = serde_json::to_string_pretty(&topo).expect("topology serializes");
            s.push('\n');
            s
        }
        TopologyFormat::Dot => {
            let mut s = String::from("digraph uwoan {\n");
            for n in &topo.nodes {
                let shape = if n.id == BS_LABEL { "box" } else { "ellipse" };
                let _ = writeln!(
                    s,
                    "  \"{}\" [shape={shape}, outcome=\"{}\", pos=\"{},{},{}\"];",
                    n.id, n.outcome, n.x, n.y, n.depth
                );
            }
            for e in &topo.edges {
                let _ = writeln!(s, "  \"{}\" -> \"{}\" [hop={}];", e.from, e.to, e.hop);
            }
            s.push_str("}\n");
            s
        }
    }
}

pub fn parse_topology_json(text: &str) -> Result<Topology, ScenarioError> {
    Ok(serde_json::from_str(text)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        let c = SimConfig::default();
        c.validate().unwrap();
        assert_eq!(c.bs_position(), Position::new(100.0, 100.0, 0.0));
        assert_eq!(c.n_uwn, 50);
        assert_eq!(c.t_max, 50.0);
    }

    #[test]
    fn parse_flat_text() {
        let c = SimConfig::parse("# comment\nn_uwn = 7\nc0 = 0.12\nt_max = 30\nmovement_marker = false\n").unwrap();
        assert_eq!(c.n_uwn, 7);
        assert_eq!(c.c0, 0.12);
        assert_eq!(c.t_max, 30.0);
        assert!(!c.movement_marker);
        assert_eq!(c.region_depth, 200.0);
    }

    #[test]
    fn unknown_key_rejected() {
        assert!(matches!(SimConfig::parse("n_uwns = 3\n"), Err(ScenarioError::Parse(_))));
    }

    #[test]
    fn invalid_values_rejected() {
        for text in ["region_east = 0", "t_max = -1", "v_min = 1.0", "p_frame_loss = 2", "n_uwn = 5000"] {
            assert!(matches!(SimConfig::parse(text), Err(ScenarioError::Invalid(_))), "{text}");
        }
    }

    #[test]
    fn text_round_trip() {
        let c = SimConfig { c0: 0.151, n_uwn: 3, ..Default::default() };
        assert_eq!(SimConfig::parse(&c.to_text()).unwrap(), c);
    }

    #[test]
    fn generate_deterministic() {
        let c = SimConfig::default();
        assert!(generate(&SimConfig { n_uwn: 0, ..c.clone() }, 1).bodies.is_empty());
        let a = generate(&c, 9);
        assert_eq!(a, generate(&c, 9));
        assert_eq!(a.bodies.len(), 50);
        assert_ne!(a, generate(&c, 10));
    }

    #[test]
    fn fingerprint_ignores_c0_and_seed() {
        let c = SimConfig::default();
        assert_eq!(c.fingerprint(), SimConfig { c0: 0.12, seed: 4, ..c.clone() }.fingerprint());
        assert_ne!(c.fingerprint(), SimConfig { n_uwn: 3, ..c }.fingerprint());
    }

    #[test]
    fn format_parse() {
        assert_eq!("dot".parse::<TopologyFormat>().unwrap(), TopologyFormat::Dot);
        assert!(matches!("svg".parse::<TopologyFormat>(), Err(ScenarioError::UnknownFormat(_))));
    }
}
