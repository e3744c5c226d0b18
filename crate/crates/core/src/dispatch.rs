//! Post-inference dispatch: recover per-node generation totals from flows
//! via the balance identity, then split each total across the node's
//! generators in merit order (cheapest carrier first, capped by
//! weather-scaled capacity).

use thiserror::Error;

use crate::datagen::Snapshot;
use crate::grid::Network;
use crate::oracle::gen_capacity;

/// Power precision: totals left unserved below this (1 kW) count as met.
pub const DISPATCH_PRECISION_MW: f64 = 1e-3;

#[derive(Debug, Error)]
pub enum DispatchError {
    #[error("flow vector has {got} entries, network has {want} links")]
    FlowShape { got: usize, want: usize },
    #[error(
        "capacity exceeded at node index {node_idx}: {remaining} MW left after all generators"
    )]
    CapacityExceeded { node_idx: usize, remaining: f64 },
    #[error("node total at index {node_idx} is {value} MW; negative beyond precision")]
    NegativeTotal { node_idx: usize, value: f64 },
}

/// How carriers are ranked when filling generators.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum RankMode {
    /// Fixed carrier order: solar, wind, OCGT, coal.
    #[default]
    CarrierTable,
    /// Sort each node's generators by their actual marginal cost.
    ByGeneratorCost,
}

/// Per-node generation totals implied by signed flows: demand plus net
/// outflow at each node.
pub fn node_totals(network: &Network, snapshot: &Snapshot, flows_mw: &[f64]) -> Result<Vec<f64>, DispatchError> {
    if flows_mw.len() != network.n_links() {
        return Err(DispatchError::FlowShape {
            got: flows_mw.len(),
            want: network.n_links(),
        });
    }
    let mut totals = snapshot.demand.clone();
    for (l, &f) in flows_mw.iter().enumerate() {
        let (from, to) = network.link_endpoints(l);
        totals[from] += f;
        totals[to] -= f;
    }
    Ok(totals)
}

/// Fills each node's generators in merit order until its total is served.
///
/// Renewable caps are scaled by the snapshot's capacity coefficients; ties
/// within a carrier resolve by generator id. Residual demand below the 1 kW
/// precision counts as satisfied; anything larger after all generators is a
/// capacity error.
pub fn merit_order_dispatch(
    network: &Network,
    snapshot: &Snapshot,
    totals: &[f64],
    rank_mode: RankMode,
) -> Result<Vec<f64>, DispatchError> {
    let mut output = vec![0.0; network.n_generators()];
    for j in 0..network.n_nodes() {
        let mut remaining = totals[j];
        if remaining < -DISPATCH_PRECISION_MW {
            return Err(DispatchError::NegativeTotal {
                node_idx: j,
                value: remaining,
            });
        }
        // Generators at this node in fill order. They are already sorted by
        // id, so a stable sort by rank keeps id order within a carrier.
        let mut gens: Vec<usize> = network.generators_at(j).to_vec();
        match rank_mode {
            RankMode::CarrierTable => {
                gens.sort_by_key(|&g| network.generators()[g].carrier.merit_rank());
            }
            RankMode::ByGeneratorCost => {
                gens.sort_by(|&a, &b| {
                    network.generators()[a]
                        .marginal_cost
                        .total_cmp(&network.generators()[b].marginal_cost)
                });
            }
        }
        for g in gens {
            if remaining <= DISPATCH_PRECISION_MW {
                break;
            }
            let cap = gen_capacity(network, snapshot, g);
            if remaining > cap {
                output[g] = cap;
                remaining -= cap;
            } else {
                output[g] = remaining;
                remaining = 0.0;
            }
        }
        if remaining > DISPATCH_PRECISION_MW {
            return Err(DispatchError::CapacityExceeded {
                node_idx: j,
                remaining,
            });
        }
    }
    Ok(output)
}
