//! Synthetic grid, weather, and demand generation plus dataset file I/O.
//!
//! Stands in for a real clustered-network pipeline at desk scale: random
//! connected grids with carrier fleets sized so demand is always coverable,
//! diurnal solar and mean-reverting wind capacity coefficients, and a demand
//! profile with daily/weekly structure. Every generated snapshot is verified
//! feasible by the dispatch oracle; snapshots that fail are rescaled a
//! bounded number of times before generation gives up.
//!
//! Everything is a pure function of (seed, config): identical inputs produce
//! byte-identical datasets.

use std::collections::HashSet;
use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{Carrier, GenId, Generator, GridError, Link, LinkId, Network, NodeId, NodeRecord};
use crate::oracle::{solve_dcopf, OracleError, OracleOptions, SolveStatus};

/// Schema version of the dataset manifest.
pub const DATASET_SCHEMA_VERSION: &str = "gridflow-data/1";
/// Default held-out fraction of snapshots.
pub const DEFAULT_TEST_FRACTION: f64 = 0.05;

const FEASIBILITY_RETRIES: usize = 6;
const RETRY_DEMAND_SCALE: f64 = 0.8;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("need at least 2 nodes, got {0}")]
    TooFewNodes(usize),
    #[error("average degree must be >= 1, got {0}")]
    BadDegree(f64),
    #[error("need at least 1 step, got {0}")]
    TooFewSteps(usize),
    #[error("infeasible snapshot at step {step}: no dispatch exists after {retries} demand rescales")]
    InfeasibleSnapshot { step: u64, retries: usize },
    #[error("test fraction must be in (0, 1), got {0}")]
    BadTestFraction(f64),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error("failed to access {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed row in {path}, line {line}: {reason}")]
    MalformedRow {
        path: String,
        line: usize,
        reason: String,
    },
    #[error("unsupported dataset schema version {found:?}, expected {expected:?}")]
    SchemaVersion { found: String, expected: String },
    #[error("dataset invariant violated: {0}")]
    Invariant(String),
}

/// One timestep: per-node demand and per-(node, renewable carrier) capacity
/// coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub step: u64,
    pub demand: Vec<f64>,
    pub eta_wind: Vec<f64>,
    pub eta_solar: Vec<f64>,
}

/// Train/test partition over snapshot indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// A network with its snapshot series, split, and the normalization maxima
/// computed on the training snapshots.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub network: Network,
    pub snapshots: Vec<Snapshot>,
    pub split: Split,
    pub demand_max: Vec<f64>,
}

impl Dataset {
    pub fn train_snapshots(&self) -> impl Iterator<Item = &Snapshot> {
        self.split.train.iter().map(|&i| &self.snapshots[i])
    }

    pub fn test_snapshots(&self) -> impl Iterator<Item = &Snapshot> {
        self.split.test.iter().map(|&i| &self.snapshots[i])
    }
}

/// Per-carrier capacity ranges and presence probabilities for synthetic
/// grids, in MW.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CapacityProfile {
    pub wind_p_nom: (f64, f64),
    pub solar_p_nom: (f64, f64),
    pub ocgt_p_nom: (f64, f64),
    pub coal_p_nom: (f64, f64),
    pub wind_prob: f64,
    pub solar_prob: f64,
    pub ocgt_prob: f64,
    pub coal_prob: f64,
    /// Probability that a node hosts no generators at all.
    pub empty_node_prob: f64,
}

impl Default for CapacityProfile {
    fn default() -> Self {
        CapacityProfile {
            wind_p_nom: (1000.0, 8000.0),
            solar_p_nom: (800.0, 6000.0),
            ocgt_p_nom: (1500.0, 6000.0),
            coal_p_nom: (1500.0, 6000.0),
            wind_prob: 0.55,
            solar_prob: 0.55,
            ocgt_prob: 0.45,
            coal_prob: 0.35,
            empty_node_prob: 0.15,
        }
    }
}

/// Generates a random connected network: a random attachment tree plus extra
/// edges up to the requested average degree, link capacities of 5000 or
/// 10000 MW, and generator fleets drawn from the capacity profile. Total
/// nominal capacity is floored at 1.5x the implied peak demand, and
/// conventional capacity at 1.2x, so the weather can never strand the grid.
pub fn synth_network(
    seed: u64,
    n_nodes: usize,
    avg_degree: f64,
    profile: &CapacityProfile,
) -> Result<Network, DataError> {
    if n_nodes < 2 {
        return Err(DataError::TooFewNodes(n_nodes));
    }
    if avg_degree < 1.0 {
        return Err(DataError::BadDegree(avg_degree));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let nodes: Vec<NodeRecord> = (1..=n_nodes as u32)
        .map(|i| NodeRecord {
            id: NodeId(i),
            name: format!("bus-{i:02}"),
        })
        .collect();

    // Spanning tree by random attachment keeps the graph connected; extra
    // random edges raise the degree toward the target.
    let mut edges: Vec<(u32, u32)> = Vec::new();
    let mut edge_set: HashSet<(u32, u32)> = HashSet::new();
    for i in 2..=n_nodes as u32 {
        let parent = rng.gen_range(1..i);
        edges.push((parent, i));
        edge_set.insert((parent.min(i), parent.max(i)));
    }
    let target_edges = ((n_nodes as f64 * avg_degree) / 2.0).round() as usize;
    let mut attempts = 0;
    while edges.len() < target_edges && attempts < 50 * n_nodes {
        attempts += 1;
        let a = rng.gen_range(1..=n_nodes as u32);
        let b = rng.gen_range(1..=n_nodes as u32);
        if a == b || edge_set.contains(&(a.min(b), a.max(b))) {
            continue;
        }
        edges.push((a, b));
        edge_set.insert((a.min(b), a.max(b)));
    }

    let links: Vec<Link> = edges
        .iter()
        .enumerate()
        .map(|(k, &(a, b))| Link {
            id: LinkId(k as u32 + 1),
            from_node: NodeId(a),
            to_node: NodeId(b),
            f_nom: if rng.gen_bool(0.5) { 10_000.0 } else { 5_000.0 },
            efficiency: 1.0,
            marginal_cost: 3.642,
        })
        .collect();

    let mut generators: Vec<Generator> = Vec::new();
    let mut gen_id = 1u32;
    let mut push = |generators: &mut Vec<Generator>, node: u32, carrier: Carrier, p_nom: f64| {
        generators.push(Generator {
            id: GenId(gen_id),
            node_id: NodeId(node),
            carrier,
            p_nom,
            marginal_cost: carrier.default_marginal_cost(),
        });
        gen_id += 1;
    };
    for i in 1..=n_nodes as u32 {
        if rng.gen_bool(profile.empty_node_prob) {
            // Pure consumer node; it lives off imports.
            continue;
        }
        if rng.gen_bool(profile.wind_prob) {
            let p = rng.gen_range(profile.wind_p_nom.0..=profile.wind_p_nom.1);
            push(&mut generators, i, Carrier::Wind, p.round());
        }
        if rng.gen_bool(profile.solar_prob) {
            let p = rng.gen_range(profile.solar_p_nom.0..=profile.solar_p_nom.1);
            push(&mut generators, i, Carrier::Solar, p.round());
        }
        if rng.gen_bool(profile.ocgt_prob) {
            let p = rng.gen_range(profile.ocgt_p_nom.0..=profile.ocgt_p_nom.1);
            push(&mut generators, i, Carrier::Ocgt, p.round());
        }
        if rng.gen_bool(profile.coal_prob) {
            let p = rng.gen_range(profile.coal_p_nom.0..=profile.coal_p_nom.1);
            push(&mut generators, i, Carrier::Coal, p.round());
        }
    }

    // Capacity floors relative to the peak demand the series generator will
    // assign (it budgets peaks off this network's capacity, see
    // `demand_peak_budget`).
    let peak_budget_per_total = 1.0 / 1.6;
    let total: f64 = generators.iter().map(|g| g.p_nom).sum();
    let implied_peak = total * peak_budget_per_total;
    let conv: f64 = generators
        .iter()
        .filter(|g| !g.carrier.is_renewable())
        .map(|g| g.p_nom)
        .sum();
    if conv < 1.2 * implied_peak {
        if conv <= 0.0 {
            // Guarantee at least one dispatchable backstop.
            let node = rng.gen_range(1..=n_nodes as u32);
            push(&mut generators, node, Carrier::Coal, (1.2 * implied_peak).max(1000.0).round());
        } else {
            let scale = 1.2 * implied_peak / conv;
            for g in generators.iter_mut() {
                if !g.carrier.is_renewable() {
                    g.p_nom = (g.p_nom * scale).round();
                }
            }
        }
    }

    Ok(Network::new(nodes, links, generators)?)
}

/// Sum of per-node peak demands the series generator budgets for a network:
/// low enough that conventional capacity alone covers any snapshot, and
/// always at most total capacity / 1.5.
fn demand_peak_budget(network: &Network) -> f64 {
    let total: f64 = network.generators().iter().map(|g| g.p_nom).sum();
    let conv: f64 = network
        .generators()
        .iter()
        .filter(|g| !g.carrier.is_renewable())
        .map(|g| g.p_nom)
        .sum();
    (total / 1.6).min(0.85 * conv).max(0.0)
}

/// Generates an hourly snapshot series for a network.
///
/// Solar coefficients follow a clipped diurnal curve (exactly zero at
/// night), wind follows a mean-reverting process blended with a shared
/// weather driver, and demand follows a daily/weekly profile with noise.
/// Each snapshot is verified feasible by the dispatch oracle; infeasible
/// draws are rescaled down a bounded number of times.
pub fn synth_series(seed: u64, network: &Network, n_steps: usize) -> Result<Vec<Snapshot>, DataError> {
    if n_steps == 0 {
        return Err(DataError::TooFewSteps(n_steps));
    }
    let n = network.n_nodes();
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(1));

    // Per-node static parameters.
    let peak_total = demand_peak_budget(network);
    let weights: Vec<f64> = (0..n).map(|_| rng.gen_range(0.3..1.7)).collect();
    let weight_sum: f64 = weights.iter().sum();
    let peaks: Vec<f64> = weights.iter().map(|w| peak_total * w / weight_sum).collect();
    let wind_mean: Vec<f64> = (0..n).map(|_| rng.gen_range(0.25..0.75)).collect();
    let solar_amp: Vec<f64> = (0..n).map(|_| rng.gen_range(0.65..0.95)).collect();

    // Dynamic states.
    let mut wind: Vec<f64> = wind_mean.clone();
    let mut cloud: Vec<f64> = vec![0.8; n];
    let mut driver = 0.5f64;

    let options = OracleOptions::default();
    let mut snapshots = Vec::with_capacity(n_steps);
    for step in 0..n_steps as u64 {
        let hour = (step % 24) as f64;
        let weekday = (step / 24) % 7 < 5;

        driver += 0.10 * (0.5 - driver) + 0.10 * gauss(&mut rng);
        driver = driver.clamp(0.0, 1.0);

        let sun = if (6.0..18.0).contains(&hour) {
            (PI * (hour - 6.0) / 12.0).sin().max(0.0).powf(1.2)
        } else {
            0.0
        };

        let mut demand = Vec::with_capacity(n);
        let mut eta_wind = Vec::with_capacity(n);
        let mut eta_solar = Vec::with_capacity(n);
        for j in 0..n {
            wind[j] += 0.12 * (wind_mean[j] - wind[j]) + 0.08 * gauss(&mut rng);
            wind[j] = wind[j].clamp(0.0, 1.0);
            eta_wind.push((0.6 * wind[j] + 0.4 * driver).clamp(0.0, 1.0));

            cloud[j] += 0.2 * (0.8 - cloud[j]) + 0.10 * gauss(&mut rng);
            cloud[j] = cloud[j].clamp(0.45, 1.0);
            eta_solar.push((solar_amp[j] * sun * cloud[j]).clamp(0.0, 1.0));

            let base = 0.62 + 0.33 * (2.0 * PI * (hour - 14.0) / 24.0).cos();
            let week = if weekday { 1.0 } else { 0.86 };
            let noise = 1.0 + 0.07 * gauss(&mut rng);
            let d = peaks[j] * base * week * noise;
            demand.push(d.clamp(0.05 * peaks[j].max(1.0), 1.2 * peaks[j]).max(1.0));
        }

        let mut snapshot = Snapshot {
            step,
            demand,
            eta_wind,
            eta_solar,
        };

        // Feasibility by construction, then verified by the oracle.
        let mut ok = false;
        for _ in 0..FEASIBILITY_RETRIES {
            let solution = solve_dcopf(network, &snapshot, &options)?;
            if solution.status == SolveStatus::Optimal {
                ok = true;
                break;
            }
            for d in snapshot.demand.iter_mut() {
                *d *= RETRY_DEMAND_SCALE;
            }
        }
        if !ok {
            return Err(DataError::InfeasibleSnapshot {
                step,
                retries: FEASIBILITY_RETRIES,
            });
        }
        snapshots.push(snapshot);
    }
    Ok(snapshots)
}

fn gauss(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller, clipped to keep outliers physical.
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    let z = (-2.0 * u1.ln()).sqrt() * (2.0 * PI * u2).cos();
    z.clamp(-3.5, 3.5)
}

/// Assembles a dataset: chronological split (last `test_fraction` of steps
/// held out) and per-node demand maxima from the training split only, unless
/// `demand_max_from_all` opts into using every snapshot.
pub fn build_dataset(
    network: Network,
    snapshots: Vec<Snapshot>,
    test_fraction: f64,
    demand_max_from_all: bool,
) -> Result<Dataset, DataError> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(DataError::BadTestFraction(test_fraction));
    }
    if snapshots.is_empty() {
        return Err(DataError::TooFewSteps(0));
    }
    let n_test = ((snapshots.len() as f64 * test_fraction).round() as usize)
        .max(1)
        .min(snapshots.len() - 1);
    let n_train = snapshots.len() - n_test;
    let split = Split {
        train: (0..n_train).collect(),
        test: (n_train..snapshots.len()).collect(),
    };

    let basis: Vec<usize> = if demand_max_from_all {
        (0..snapshots.len()).collect()
    } else {
        split.train.clone()
    };
    let n = network.n_nodes();
    let mut demand_max = vec![0.0f64; n];
    for &i in &basis {
        for j in 0..n {
            demand_max[j] = demand_max[j].max(snapshots[i].demand[j]);
        }
    }
    for (j, &d) in demand_max.iter().enumerate() {
        if !(d > 0.0) {
            return Err(DataError::Invariant(format!(
                "demand_max at node index {j} is {d}; must be strictly positive"
            )));
        }
    }

    Ok(Dataset {
        network,
        snapshots,
        split,
        demand_max,
    })
}

/// File names written next to a dataset manifest.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: String,
    pub network_file: String,
    pub snapshots_file: String,
    pub split: Split,
    pub demand_max: Vec<f64>,
}

/// Writes `network.json`, `snapshots.csv`, and `manifest.json` into `dir`.
/// Returns the manifest path.
pub fn save_dataset(dataset: &Dataset, dir: impl AsRef<Path>) -> Result<PathBuf, DataError> {
    let dir = dir.as_ref();
    let io_err = |path: &Path, source: std::io::Error| DataError::Io {
        path: path.display().to_string(),
        source,
    };

    let network_path = dir.join("network.json");
    dataset.network.save(&network_path)?;

    let snapshots_path = dir.join("snapshots.csv");
    let mut out = String::from("step,node_id,demand_mw,eta_wind,eta_solar\n");
    for snap in &dataset.snapshots {
        for (j, node) in dataset.network.nodes().iter().enumerate() {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                snap.step, node.id.0, snap.demand[j], snap.eta_wind[j], snap.eta_solar[j]
            ));
        }
    }
    std::fs::write(&snapshots_path, out).map_err(|e| io_err(&snapshots_path, e))?;

    let manifest = DatasetManifest {
        version: DATASET_SCHEMA_VERSION.to_string(),
        network_file: "network.json".to_string(),
        snapshots_file: "snapshots.csv".to_string(),
        split: dataset.split.clone(),
        demand_max: dataset.demand_max.clone(),
    };
    let manifest_path = dir.join("manifest.json");
    std::fs::write(
        &manifest_path,
        serde_json::to_string_pretty(&manifest).expect("manifest serializes"),
    )
    .map_err(|e| io_err(&manifest_path, e))?;
    Ok(manifest_path)
}

/// Loads a dataset from its manifest, validating the schema version, row
/// shapes, and value ranges. Numeric fields round-trip bit-exactly.
pub fn load_dataset(manifest_path: impl AsRef<Path>) -> Result<Dataset, DataError> {
    let manifest_path = manifest_path.as_ref();
    let io_err = |path: &Path, source: std::io::Error| DataError::Io {
        path: path.display().to_string(),
        source,
    };
    let text = std::fs::read_to_string(manifest_path).map_err(|e| io_err(manifest_path, e))?;
    let manifest: DatasetManifest =
        serde_json::from_str(&text).map_err(|e| DataError::MalformedRow {
            path: manifest_path.display().to_string(),
            line: e.line(),
            reason: e.to_string(),
        })?;
    if manifest.version != DATASET_SCHEMA_VERSION {
        return Err(DataError::SchemaVersion {
            found: manifest.version,
            expected: DATASET_SCHEMA_VERSION.to_string(),
        });
    }

    let dir = manifest_path.parent().unwrap_or_else(|| Path::new("."));
    let network = Network::load(dir.join(&manifest.network_file))?;
    let snapshots = load_snapshots(dir.join(&manifest.snapshots_file), &network)?;

    let n_snaps = snapshots.len();
    let in_range = |ix: &[usize]| ix.iter().all(|&i| i < n_snaps);
    if !in_range(&manifest.split.train) || !in_range(&manifest.split.test) {
        return Err(DataError::Invariant(
            "split indices exceed snapshot count".to_string(),
        ));
    }
    let train_set: HashSet<usize> = manifest.split.train.iter().copied().collect();
    if manifest.split.test.iter().any(|i| train_set.contains(i)) {
        return Err(DataError::Invariant(
            "train and test splits overlap".to_string(),
        ));
    }
    if manifest.demand_max.len() != network.n_nodes() {
        return Err(DataError::Invariant(format!(
            "demand_max has {} entries for {} nodes",
            manifest.demand_max.len(),
            network.n_nodes()
        )));
    }
    for (j, &d) in manifest.demand_max.iter().enumerate() {
        if !(d > 0.0) {
            return Err(DataError::Invariant(format!(
                "demand_max at node index {j} is {d}; must be strictly positive"
            )));
        }
    }

    Ok(Dataset {
        network,
        snapshots,
        split: manifest.split,
        demand_max: manifest.demand_max,
    })
}

/// Parses a snapshots CSV, reporting malformed rows with their line number.
pub fn load_snapshots(path: impl AsRef<Path>, network: &Network) -> Result<Vec<Snapshot>, DataError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let malformed = |line: usize, reason: String| DataError::MalformedRow {
        path: path.display().to_string(),
        line,
        reason,
    };

    let n = network.n_nodes();
    let mut snapshots: Vec<Snapshot> = Vec::new();
    for (line_ix, line) in text.lines().enumerate() {
        let line_no = line_ix + 1;
        if line_ix == 0 {
            let expected = "step,node_id,demand_mw,eta_wind,eta_solar";
            if line.trim() != expected {
                return Err(malformed(line_no, format!("header must be {expected:?}")));
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 5 {
            return Err(malformed(
                line_no,
                format!("expected 5 columns, got {}", parts.len()),
            ));
        }
        let step: u64 = parts[0]
            .parse()
            .map_err(|_| malformed(line_no, format!("bad step {:?}", parts[0])))?;
        let node_id: u32 = parts[1]
            .parse()
            .map_err(|_| malformed(line_no, format!("bad node id {:?}", parts[1])))?;
        let j = network
            .node_index(NodeId(node_id))
            .ok_or_else(|| malformed(line_no, format!("unknown node id {node_id}")))?;
        let demand: f64 = parts[2]
            .parse()
            .map_err(|_| malformed(line_no, format!("bad demand {:?}", parts[2])))?;
        let eta_w: f64 = parts[3]
            .parse()
            .map_err(|_| malformed(line_no, format!("bad eta_wind {:?}", parts[3])))?;
        let eta_s: f64 = parts[4]
            .parse()
            .map_err(|_| malformed(line_no, format!("bad eta_solar {:?}", parts[4])))?;
        if !demand.is_finite() || demand < 0.0 {
            return Err(malformed(line_no, format!("demand {demand} out of range")));
        }
        for (name, v) in [("eta_wind", eta_w), ("eta_solar", eta_s)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(malformed(line_no, format!("{name} {v} outside [0, 1]")));
            }
        }

        if snapshots.last().map_or(true, |s| s.step != step) {
            snapshots.push(Snapshot {
                step,
                demand: vec![f64::NAN; n],
                eta_wind: vec![f64::NAN; n],
                eta_solar: vec![f64::NAN; n],
            });
        }
        let snap = snapshots.last_mut().unwrap();
        snap.demand[j] = demand;
        snap.eta_wind[j] = eta_w;
        snap.eta_solar[j] = eta_s;
    }

    for snap in &snapshots {
        if snap.demand.iter().any(|v| v.is_nan()) {
            return Err(malformed(
                0,
                format!("snapshot {} is missing rows for some nodes", snap.step),
            ));
        }
    }
    Ok(snapshots)
}
