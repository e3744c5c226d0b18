//! Evaluation: the bounded MAAPE regression metric, nodal imbalance
//! reporting before/after projection, PCA over attention matrices, the
//! linear-regression and k-nearest-neighbor baselines, and wall-clock
//! benchmarking.

pub mod baselines;
pub mod pca;
pub mod plot;

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datagen::Snapshot;
use crate::grid::Network;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("inputs must be non-empty")]
    Empty,
    #[error("length mismatch: {0}")]
    Shape(String),
    #[error("need at least {need} samples, got {got}")]
    TooFewSamples { need: usize, got: usize },
    #[error("failed to write {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Mean arctangent absolute percentage error: mean of
/// arctan(|(actual - forecast) / actual|), bounded in [0, pi/2).
///
/// A zero actual with a nonzero forecast contributes the limit pi/2; an
/// exact 0/0 pair contributes 0.
pub fn maape(actual: &[f64], forecast: &[f64]) -> Result<f64, EvalError> {
    if actual.is_empty() {
        return Err(EvalError::Empty);
    }
    if actual.len() != forecast.len() {
        return Err(EvalError::Shape(format!(
            "actual has {}, forecast has {}",
            actual.len(),
            forecast.len()
        )));
    }
    let sum: f64 = actual
        .iter()
        .zip(forecast)
        .map(|(&a, &f)| {
            if a == 0.0 {
                if f == 0.0 {
                    0.0
                } else {
                    std::f64::consts::FRAC_PI_2
                }
            } else {
                ((a - f) / a).abs().atan()
            }
        })
        .sum();
    Ok(sum / actual.len() as f64)
}

/// Nodal imbalance of a flow vector: how far each implied node total falls
/// outside its feasible generation interval [0, available capacity], in MW.
pub fn nodal_imbalance(network: &Network, snapshot: &Snapshot, flows_mw: &[f64]) -> Vec<f64> {
    let avail = network.available_capacity(&snapshot.eta_wind, &snapshot.eta_solar);
    let mut totals = snapshot.demand.clone();
    for (l, &f) in flows_mw.iter().enumerate() {
        let (from, to) = network.link_endpoints(l);
        totals[from] += f;
        totals[to] -= f;
    }
    totals
        .iter()
        .zip(&avail)
        .map(|(&t, &cap)| (t.clamp(0.0, cap) - t).abs())
        .collect()
}

/// Mean absolute nodal imbalance per node over a snapshot set, for flows
/// before and after projection.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ImbalanceReport {
    pub per_node_before: Vec<f64>,
    pub per_node_after: Vec<f64>,
    pub grand_mean_before: f64,
    pub grand_mean_after: f64,
    /// Largest single-node imbalance left after projection, in MW.
    pub max_after: f64,
}

pub fn imbalance_report(
    network: &Network,
    snapshots: &[&Snapshot],
    flows_before: &[Vec<f64>],
    flows_after: &[Vec<f64>],
) -> Result<ImbalanceReport, EvalError> {
    if snapshots.is_empty() {
        return Err(EvalError::Empty);
    }
    if flows_before.len() != snapshots.len() || flows_after.len() != snapshots.len() {
        return Err(EvalError::Shape(format!(
            "{} snapshots but {} before / {} after flow sets",
            snapshots.len(),
            flows_before.len(),
            flows_after.len()
        )));
    }
    let n = network.n_nodes();
    let mut before = vec![0.0; n];
    let mut after = vec![0.0; n];
    let mut max_after = 0.0f64;
    for ((snap, fb), fa) in snapshots.iter().zip(flows_before).zip(flows_after) {
        for (j, v) in nodal_imbalance(network, snap, fb).into_iter().enumerate() {
            before[j] += v;
        }
        for (j, v) in nodal_imbalance(network, snap, fa).into_iter().enumerate() {
            after[j] += v;
            max_after = max_after.max(v);
        }
    }
    let count = snapshots.len() as f64;
    for v in before.iter_mut() {
        *v /= count;
    }
    for v in after.iter_mut() {
        *v /= count;
    }
    Ok(ImbalanceReport {
        grand_mean_before: before.iter().sum::<f64>() / n as f64,
        grand_mean_after: after.iter().sum::<f64>() / n as f64,
        per_node_before: before,
        per_node_after: after,
        max_after,
    })
}

/// Wall-clock cost of a batch predictor: median over `reps` repetitions of
/// the full run, reported in seconds per 100 items.
pub fn runtime_bench<F: FnMut()>(mut run_all: F, n_items: usize, reps: usize) -> f64 {
    assert!(n_items > 0 && reps > 0);
    let mut times: Vec<f64> = (0..reps.max(5))
        .map(|_| {
            let t0 = Instant::now();
            run_all();
            t0.elapsed().as_secs_f64()
        })
        .collect();
    times.sort_by(f64::total_cmp);
    let median = times[times.len() / 2];
    median / n_items as f64 * 100.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RuntimeReport {
    /// Model inference plus projection, seconds per 100 snapshots.
    pub model_sec_per_100: f64,
    /// Exact solver, seconds per 100 snapshots.
    pub oracle_sec_per_100: f64,
    pub n_snapshots: usize,
    pub repetitions: usize,
}

/// Full evaluation summary written by the eval stage.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    /// MAAPE of predicted normalized flows against oracle labels.
    pub maape_flows: f64,
    /// MAAPE of dispatched generator outputs, grouped by carrier.
    pub maape_generation_by_carrier: BTreeMap<String, f64>,
    pub imbalance: ImbalanceReport,
    /// Baseline MAAPE values on the same test split, when computed.
    #[serde(default)]
    pub baseline_maape_flows: BTreeMap<String, f64>,
    #[serde(default)]
    pub runtime: Option<RuntimeReport>,
}

impl EvalReport {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), EvalError> {
        let path = path.as_ref();
        std::fs::write(path, serde_json::to_string_pretty(self).expect("report serializes"))
            .map_err(|source| EvalError::Io {
                path: path.display().to_string(),
                source,
            })
    }

    /// Human-readable rendering for the console.
    pub fn render_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("MAAPE flows:            {:.6}\n", self.maape_flows));
        for (carrier, v) in &self.maape_generation_by_carrier {
            out.push_str(&format!("MAAPE generation {carrier:>6}: {v:.6}\n"));
        }
        for (name, v) in &self.baseline_maape_flows {
            out.push_str(&format!("MAAPE baseline {name:>8}: {v:.6}\n"));
        }
        out.push_str(&format!(
            "imbalance before projection: {:.6} MW mean\n",
            self.imbalance.grand_mean_before
        ));
        out.push_str(&format!(
            "imbalance after projection:  {:.9} MW mean, {:.9} MW max\n",
            self.imbalance.grand_mean_after, self.imbalance.max_after
        ));
        if let Some(rt) = &self.runtime {
            out.push_str(&format!(
                "runtime: model {:.4} s/100, oracle {:.4} s/100\n",
                rt.model_sec_per_100, rt.oracle_sec_per_100
            ));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{Carrier, GenId, Generator, Link, LinkId, NodeId, NodeRecord};
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_4};

    #[test]
    fn maape_exact_match_is_zero() {
        assert_eq!(maape(&[1.0, -2.0, 3.5], &[1.0, -2.0, 3.5]).unwrap(), 0.0);
    }

    #[test]
    fn maape_unit_error_is_quarter_pi() {
        let v = maape(&[1.0], &[0.0]).unwrap();
        assert!((v - FRAC_PI_4).abs() < 1e-12);
    }

    #[test]
    fn maape_zero_actual_nonzero_forecast_is_half_pi() {
        let v = maape(&[0.0], &[5.0]).unwrap();
        assert!((v - FRAC_PI_2).abs() < 1e-15);
    }

    #[test]
    fn maape_zero_zero_contributes_nothing() {
        assert_eq!(maape(&[0.0, 1.0], &[0.0, 1.0]).unwrap(), 0.0);
    }

    #[test]
    fn maape_bounded_on_arbitrary_inputs() {
        let a = [1e-12, -4.0, 0.0, 7.0, -1e9];
        let f = [5.0, 4.0, 1.0, -7.0, 1e9];
        let v = maape(&a, &f).unwrap();
        assert!(v >= 0.0 && v < FRAC_PI_2);
    }

    #[test]
    fn maape_rejects_empty() {
        assert!(maape(&[], &[]).is_err());
    }

    fn small_net() -> Network {
        Network::new(
            vec![
                NodeRecord { id: NodeId(1), name: "a".into() },
                NodeRecord { id: NodeId(2), name: "b".into() },
            ],
            vec![Link {
                id: LinkId(1),
                from_node: NodeId(1),
                to_node: NodeId(2),
                f_nom: 10.0,
                efficiency: 1.0,
                marginal_cost: 0.0,
            }],
            vec![Generator {
                id: GenId(1),
                node_id: NodeId(1),
                carrier: Carrier::Coal,
                p_nom: 8.0,
                marginal_cost: 125.0,
            }],
        )
        .unwrap()
    }

    #[test]
    fn imbalance_zero_flows_beyond_capacity() {
        let net = small_net();
        let snap = Snapshot {
            step: 0,
            demand: vec![0.0, 5.0],
            eta_wind: vec![0.0; 2],
            eta_solar: vec![0.0; 2],
        };
        // Zero flows: node b must generate 5 MW but has no generator.
        let imb = nodal_imbalance(&net, &snap, &[0.0]);
        assert_eq!(imb, vec![0.0, 5.0]);
        // Routing 5 MW from a to b fixes it: a generates 5 <= 8.
        let imb = nodal_imbalance(&net, &snap, &[5.0]);
        assert_eq!(imb, vec![0.0, 0.0]);
    }

    #[test]
    fn bench_reports_sane_scale() {
        let mut counter = 0u64;
        let sec = runtime_bench(
            || {
                for _ in 0..100 {
                    counter = counter.wrapping_add(1);
                }
            },
            100,
            5,
        );
        assert!(sec >= 0.0 && sec < 1.0, "got {sec}");
        assert!(counter > 0);
    }
}
