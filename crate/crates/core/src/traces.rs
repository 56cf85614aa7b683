//! Mobility-trace ingestion, delay synthesis, and normalization.
//!
//! Delay reports either come from a GPS trace CSV (one row per position
//! fix) or from the synthetic generator. Either way the output is a stream
//! of per-vehicle per-slot [`DelayReport`]s addressed to edge nodes.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::seed;
use crate::{Error, Result};

pub type NodeId = u32;
pub type VehicleId = String;

/// Node id 0 is reserved for the global aggregator; it never collects
/// vehicle reports directly.
pub const GLOBAL_NODE: NodeId = 0;

#[derive(Debug, Clone, PartialEq)]
pub struct RawTracePoint {
    pub vehicle_id: VehicleId,
    pub timestamp: f64,
    pub lat: f64,
    pub lon: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DelayReport {
    pub vehicle_id: VehicleId,
    pub slot: u64,
    pub node_id: NodeId,
    pub delay_ms: f64,
    /// Ground truth for scoring only. Training and detection never read it.
    pub poisoned: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: f64,
    pub std: f64,
}

impl NormStats {
    pub fn is_degenerate(&self) -> bool {
        self.std < 1e-12
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SlotSeries {
    pub node_id: NodeId,
    pub start_slot: u64,
    pub values: Vec<f64>,
}

/// Linear distance-based delay model used by both synthesis paths.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DelayModel {
    pub d_base_ms: f64,
    pub alpha_ms_per_km: f64,
    pub d_min_ms: f64,
    pub noise_std_ms: f64,
}

impl Default for DelayModel {
    fn default() -> Self {
        Self {
            d_base_ms: 20.0,
            alpha_ms_per_km: 5.0,
            d_min_ms: 1.0,
            noise_std_ms: 2.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NodePosition {
    pub node_id: NodeId,
    pub lat: f64,
    pub lon: f64,
}

/// Configuration of the synthetic traffic generator.
///
/// Each vehicle sits at a fixed distance from its (round-robin assigned)
/// node; the per-node congestion term is an AR(1) process plus an optional
/// sinusoidal daily pattern, so node series can range from flat noise to
/// strongly structured.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub num_vehicles: usize,
    pub num_slots: u64,
    pub num_local_nodes: usize,
    pub vehicle_spread_km: f64,
    pub sin_amplitude_ms: f64,
    pub sin_period_slots: f64,
    pub ar_coeff: f64,
    pub ar_std_ms: f64,
    pub delay: DelayModel,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            num_vehicles: 30,
            num_slots: 260,
            num_local_nodes: 5,
            vehicle_spread_km: 0.4,
            sin_amplitude_ms: 0.0,
            sin_period_slots: 48.0,
            ar_coeff: 0.0,
            ar_std_ms: 0.0,
            delay: DelayModel::default(),
        }
    }
}

/// Parse a `vehicle_id,timestamp,lat,lon` CSV. An optional header row is
/// tolerated. Returns the sorted points plus the count of skipped
/// malformed rows.
pub fn parse_trace_csv(path: &Path) -> Result<(Vec<RawTracePoint>, usize)> {
    let file = File::open(path)?;
    let reader = BufReader::new(file);
    let mut points = Vec::new();
    let mut skipped = 0usize;
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        match parse_trace_row(line) {
            Some(p) => points.push(p),
            None => {
                // A first row that fails to parse is assumed to be a header.
                if i > 0 {
                    skipped += 1;
                }
            }
        }
    }
    if points.is_empty() {
        return Err(Error::EmptyTrace);
    }
    points.sort_by(|a, b| {
        (&a.vehicle_id, a.timestamp)
            .partial_cmp(&(&b.vehicle_id, b.timestamp))
            .unwrap()
    });
    Ok((points, skipped))
}

fn parse_trace_row(line: &str) -> Option<RawTracePoint> {
    let mut fields = line.split(',').map(str::trim);
    let vehicle_id = fields.next()?.to_string();
    let timestamp: f64 = fields.next()?.parse().ok()?;
    let lat: f64 = fields.next()?.parse().ok()?;
    let lon: f64 = fields.next()?.parse().ok()?;
    if fields.next().is_some() || vehicle_id.is_empty() {
        return None;
    }
    if !(-90.0..=90.0).contains(&lat) || !(-180.0..=180.0).contains(&lon) {
        return None;
    }
    if !timestamp.is_finite() {
        return None;
    }
    Some(RawTracePoint {
        vehicle_id,
        timestamp,
        lat,
        lon,
    })
}

/// Equirectangular approximation, adequate for a ~10x10 km urban extract.
fn distance_km(lat1: f64, lon1: f64, lat2: f64, lon2: f64) -> f64 {
    const KM_PER_DEG: f64 = 111.32;
    let mean_lat = (lat1 + lat2) * 0.5;
    let dx = (lon2 - lon1) * mean_lat.to_radians().cos() * KM_PER_DEG;
    let dy = (lat2 - lat1) * KM_PER_DEG;
    (dx * dx + dy * dy).sqrt()
}

fn nearest_node(lat: f64, lon: f64, nodes: &[NodePosition]) -> (NodeId, f64) {
    let mut best = (nodes[0].node_id, f64::INFINITY);
    for n in nodes {
        let d = distance_km(lat, lon, n.lat, n.lon);
        if d < best.1 {
            best = (n.node_id, d);
        }
    }
    best
}

/// Convert trace points into per-slot delay reports. A vehicle active in a
/// slot emits one report to its nearest node, with delay from the linear
/// distance model plus Gaussian noise, clamped to `d_min_ms`.
pub fn delays_from_trace(
    points: &[RawTracePoint],
    nodes: &[NodePosition],
    slot_len_s: f64,
    model: &DelayModel,
    master_seed: u64,
) -> Result<Vec<DelayReport>> {
    if slot_len_s <= 0.0 {
        return Err(Error::Config("slot_len must be positive".into()));
    }
    if nodes.is_empty() {
        return Err(Error::Config("node positions must be non-empty".into()));
    }
    let t0 = points
        .iter()
        .map(|p| p.timestamp)
        .fold(f64::INFINITY, f64::min);
    // Last fix per (vehicle, slot) wins.
    let mut latest: BTreeMap<(VehicleId, u64), &RawTracePoint> = BTreeMap::new();
    for p in points {
        let slot = ((p.timestamp - t0) / slot_len_s).floor() as u64;
        latest.insert((p.vehicle_id.clone(), slot), p);
    }
    let noise = Normal::new(0.0, model.noise_std_ms.max(0.0))
        .map_err(|e| Error::Config(e.to_string()))?;
    let mut reports = Vec::with_capacity(latest.len());
    for ((vehicle_id, slot), p) in latest {
        let (node_id, dist) = nearest_node(p.lat, p.lon, nodes);
        let mut rng = seed::rng_for(
            master_seed,
            &[seed::tag("trace-delay"), seed::tag(&vehicle_id), slot],
        );
        let eps = if model.noise_std_ms > 0.0 {
            noise.sample(&mut rng)
        } else {
            0.0
        };
        let delay_ms = (model.d_base_ms + model.alpha_ms_per_km * dist + eps).max(model.d_min_ms);
        reports.push(DelayReport {
            vehicle_id,
            slot,
            node_id,
            delay_ms,
            poisoned: false,
        });
    }
    Ok(reports)
}

/// Synthetic vehicle id, zero padded so lexicographic order matches
/// numeric order.
pub fn synth_vehicle_id(i: usize) -> VehicleId {
    format!("v{:04}", i)
}

/// Generate a full synthetic report stream. Vehicles are assigned to local
/// nodes round-robin (node ids 1..=num_local_nodes); the global node gets
/// none. Bit-deterministic for a fixed seed.
pub fn synthesize_reports(cfg: &SyntheticConfig, master_seed: u64) -> Result<Vec<DelayReport>> {
    if cfg.num_local_nodes == 0 {
        return Err(Error::Config("num_local_nodes must be >= 1".into()));
    }
    if cfg.num_vehicles == 0 || cfg.num_slots == 0 {
        return Err(Error::Config("num_vehicles and num_slots must be >= 1".into()));
    }
    let k = cfg.num_local_nodes;
    // Fixed per-vehicle distance from its node.
    let mut dist_rng = seed::rng_for(master_seed, &[seed::tag("veh-dist")]);
    let dists: Vec<f64> = (0..cfg.num_vehicles)
        .map(|_| dist_rng.gen::<f64>() * cfg.vehicle_spread_km)
        .collect();
    // Per-node AR(1) congestion paths.
    let mut congestion = vec![vec![0.0f64; cfg.num_slots as usize]; k];
    for (n, path) in congestion.iter_mut().enumerate() {
        let mut rng = seed::rng_for(master_seed, &[seed::tag("node-ar"), n as u64]);
        let normal = Normal::new(0.0, cfg.ar_std_ms.max(0.0)).unwrap();
        let mut c = 0.0f64;
        for v in path.iter_mut() {
            if cfg.ar_std_ms > 0.0 {
                c = cfg.ar_coeff * c + normal.sample(&mut rng);
            }
            *v = c;
        }
    }
    let noise = Normal::new(0.0, cfg.delay.noise_std_ms.max(0.0)).unwrap();
    let mut reports = Vec::with_capacity(cfg.num_vehicles * cfg.num_slots as usize);
    for slot in 0..cfg.num_slots {
        for v in 0..cfg.num_vehicles {
            let node_idx = v % k;
            let node_id = (node_idx + 1) as NodeId;
            let seasonal = if cfg.sin_amplitude_ms > 0.0 {
                let phase = 2.0 * std::f64::consts::PI * node_idx as f64 / k as f64;
                cfg.sin_amplitude_ms
                    * (2.0 * std::f64::consts::PI * slot as f64 / cfg.sin_period_slots + phase)
                        .sin()
            } else {
                0.0
            };
            let mut rng = seed::rng_for(
                master_seed,
                &[seed::tag("veh-noise"), v as u64, slot],
            );
            let eps = if cfg.delay.noise_std_ms > 0.0 {
                noise.sample(&mut rng)
            } else {
                0.0
            };
            let delay_ms = (cfg.delay.d_base_ms
                + cfg.delay.alpha_ms_per_km * dists[v]
                + seasonal
                + congestion[node_idx][slot as usize]
                + eps)
                .max(cfg.delay.d_min_ms);
            reports.push(DelayReport {
                vehicle_id: synth_vehicle_id(v),
                slot,
                node_id,
                delay_ms,
                poisoned: false,
            });
        }
    }
    Ok(reports)
}

/// Re-tag reports with node assignments for a cluster of `e` nodes
/// (1 global + e-1 locals). With node positions the nearest local node
/// wins; without, assignment is round-robin over sorted vehicle ids.
pub fn assign_vehicles_to_nodes(
    reports: &mut [DelayReport],
    cluster_size: usize,
    positions: Option<(&[NodePosition], &BTreeMap<VehicleId, (f64, f64)>)>,
) -> Result<()> {
    if cluster_size < 2 {
        return Err(Error::Config(
            "cluster_size must be >= 2 (1 global + at least 1 local)".into(),
        ));
    }
    let k = cluster_size - 1;
    match positions {
        Some((nodes, vehicle_pos)) => {
            let locals: Vec<NodePosition> = nodes
                .iter()
                .filter(|n| n.node_id != GLOBAL_NODE)
                .copied()
                .collect();
            if locals.is_empty() {
                return Err(Error::Config("no local node positions given".into()));
            }
            for r in reports.iter_mut() {
                let (lat, lon) = vehicle_pos
                    .get(&r.vehicle_id)
                    .copied()
                    .ok_or_else(|| Error::Config(format!("no position for {}", r.vehicle_id)))?;
                r.node_id = nearest_node(lat, lon, &locals).0;
            }
        }
        None => {
            let mut ids: Vec<VehicleId> =
                reports.iter().map(|r| r.vehicle_id.clone()).collect();
            ids.sort();
            ids.dedup();
            let index: BTreeMap<VehicleId, usize> =
                ids.into_iter().enumerate().map(|(i, v)| (v, i)).collect();
            for r in reports.iter_mut() {
                r.node_id = ((index[&r.vehicle_id] % k) + 1) as NodeId;
            }
        }
    }
    Ok(())
}

pub fn zscore_fit(values: &[f64]) -> Result<NormStats> {
    if values.is_empty() {
        return Err(Error::Config("cannot fit normalization on empty input".into()));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    Ok(NormStats {
        mean,
        std: var.sqrt(),
    })
}

pub fn zscore_apply(x: f64, stats: &NormStats) -> f64 {
    if stats.is_degenerate() {
        0.0
    } else {
        (x - stats.mean) / stats.std
    }
}

pub fn zscore_invert(z: f64, stats: &NormStats) -> Result<f64> {
    if stats.is_degenerate() {
        return Err(Error::DegenerateNorm);
    }
    Ok(z * stats.std + stats.mean)
}

fn median(sorted: &mut Vec<f64>) -> f64 {
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

/// Build the per-slot representative series for one node over the window
/// `[start, start+len)`. Representative = median of the slot's reported
/// delays; empty slots carry the previous representative forward, and an
/// empty first slot falls back to `default_ms`.
pub fn make_node_series(
    reports: &[DelayReport],
    node_id: NodeId,
    start: u64,
    len: usize,
    default_ms: f64,
) -> SlotSeries {
    let mut per_slot: BTreeMap<u64, Vec<f64>> = BTreeMap::new();
    for r in reports {
        if r.node_id == node_id && r.slot >= start && r.slot < start + len as u64 {
            per_slot.entry(r.slot).or_default().push(r.delay_ms);
        }
    }
    let mut values = Vec::with_capacity(len);
    let mut prev = default_ms;
    for i in 0..len {
        let slot = start + i as u64;
        if let Some(vals) = per_slot.get_mut(&slot) {
            prev = median(vals);
        }
        values.push(prev);
    }
    SlotSeries {
        node_id,
        start_slot: start,
        values,
    }
}
