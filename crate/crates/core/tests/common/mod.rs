//! Shared test oracles, deliberately independent of the library's solver and
//! tape code paths: plain Gaussian elimination, exhaustive vertex and
//! active-set enumeration, breadth-first search, and a straight-line forward
//! recomputation of the model.

#![allow(dead_code)]

use gridflow_core::datagen::Snapshot;
use gridflow_core::encoding::FeatureMatrix;
use gridflow_core::grid::{Carrier, GenId, Generator, Link, LinkId, Network, NodeId, NodeRecord};
use gridflow_core::nn::{ModelInputs, ModelParams};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

/// Solves a small dense square system by Gaussian elimination with partial
/// pivoting. Returns None when the matrix is numerically singular.
pub fn gauss_solve(a: &[Vec<f64>], b: &[f64]) -> Option<Vec<f64>> {
    let n = b.len();
    let mut m: Vec<Vec<f64>> = a.iter().cloned().collect();
    let mut x: Vec<f64> = b.to_vec();
    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs()))?;
        if m[pivot][col].abs() < 1e-11 {
            return None;
        }
        m.swap(col, pivot);
        x.swap(col, pivot);
        for row in col + 1..n {
            let factor = m[row][col] / m[col][col];
            if factor != 0.0 {
                for k in col..n {
                    m[row][k] -= factor * m[col][k];
                }
                x[row] -= factor * x[col];
            }
        }
    }
    for col in (0..n).rev() {
        for row in 0..col {
            let factor = m[row][col] / m[col][col];
            if factor != 0.0 {
                x[row] -= factor * x[col];
            }
        }
        x[col] /= m[col][col];
    }
    Some(x)
}

/// Breadth-first distances from a start node over the undirected link graph.
pub fn bfs_distances(network: &Network, start: usize) -> Vec<usize> {
    let n = network.n_nodes();
    let mut dist = vec![usize::MAX; n];
    dist[start] = 0;
    let mut queue = std::collections::VecDeque::from([start]);
    while let Some(i) = queue.pop_front() {
        for &j in network.neighbors(i) {
            if dist[j] == usize::MAX {
                dist[j] = dist[i] + 1;
                queue.push_back(j);
            }
        }
    }
    dist
}

/// Exhaustive minimum of the transport dispatch problem by enumerating every
/// candidate vertex of the feasible polytope (refined by the |flow| kink at
/// zero). Variables are generator outputs and signed flows; each non-basic
/// variable sits at a bound or, for flows, at zero.
///
/// Returns the optimal objective, or None if no feasible vertex exists.
pub fn vertex_lp_objective(
    network: &Network,
    snapshot: &Snapshot,
    use_link_costs: bool,
) -> Option<f64> {
    let n = network.n_nodes();
    let n_gen = network.n_generators();
    let n_link = network.n_links();
    let n_var = n_gen + n_link;
    assert!(n_var <= 12, "vertex enumeration needs a tiny problem");

    // Column j of the equality system; rows are nodes.
    let mut cols: Vec<Vec<f64>> = Vec::with_capacity(n_var);
    for g in 0..n_gen {
        let mut col = vec![0.0; n];
        col[network.gen_node(g)] = 1.0;
        cols.push(col);
    }
    for l in 0..n_link {
        let (from, to) = network.link_endpoints(l);
        let mut col = vec![0.0; n];
        col[from] = -1.0;
        col[to] = 1.0;
        cols.push(col);
    }
    let caps: Vec<f64> = (0..n_gen)
        .map(|g| gridflow_core::oracle::gen_capacity(network, snapshot, g))
        .collect();

    let scale = 1.0 + snapshot.demand.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
    let feas_tol = 1e-7 * scale;
    let mut best: Option<f64> = None;

    // Choose which variables are basic (solved from the equalities).
    let mut basis = vec![0usize; n];
    enumerate_subsets(n_var, n, &mut basis, 0, 0, &mut |basis: &[usize]| {
        let is_basic: Vec<bool> = {
            let mut v = vec![false; n_var];
            for &b in basis {
                v[b] = true;
            }
            v
        };
        let nonbasic: Vec<usize> = (0..n_var).filter(|j| !is_basic[*j]).collect();

        // Each non-basic generator sits at 0 or its cap; each non-basic flow
        // at -f_nom, 0, or +f_nom.
        let options: Vec<Vec<f64>> = nonbasic
            .iter()
            .map(|&j| {
                if j < n_gen {
                    vec![0.0, caps[j]]
                } else {
                    let f_nom = network.links()[j - n_gen].f_nom;
                    vec![-f_nom, 0.0, f_nom]
                }
            })
            .collect();

        let mut assignment = vec![0usize; nonbasic.len()];
        loop {
            // Residual demand once non-basic variables are fixed.
            let mut rhs = snapshot.demand.clone();
            for (pos, &j) in nonbasic.iter().enumerate() {
                let v = options[pos][assignment[pos]];
                for (r, c) in rhs.iter_mut().zip(&cols[j]) {
                    *r -= c * v;
                }
            }
            let a_basis: Vec<Vec<f64>> = (0..n)
                .map(|row| basis.iter().map(|&j| cols[j][row]).collect())
                .collect();
            if let Some(xb) = gauss_solve(&a_basis, &rhs) {
                let mut x = vec![0.0; n_var];
                for (pos, &j) in nonbasic.iter().enumerate() {
                    x[j] = options[pos][assignment[pos]];
                }
                for (&j, v) in basis.iter().zip(&xb) {
                    x[j] = *v;
                }
                let feasible = (0..n_var).all(|j| {
                    if j < n_gen {
                        x[j] >= -feas_tol && x[j] <= caps[j] + feas_tol
                    } else {
                        let f_nom = network.links()[j - n_gen].f_nom;
                        x[j].abs() <= f_nom + feas_tol
                    }
                });
                if feasible {
                    let mut obj = 0.0;
                    for g in 0..n_gen {
                        obj += network.generators()[g].marginal_cost * x[g];
                    }
                    if use_link_costs {
                        for l in 0..n_link {
                            obj += network.links()[l].marginal_cost * x[n_gen + l].abs();
                        }
                    }
                    if best.map_or(true, |b| obj < b) {
                        best = Some(obj);
                    }
                }
            }

            // Next assignment in mixed radix.
            let mut k = 0;
            loop {
                if k == assignment.len() {
                    return;
                }
                assignment[k] += 1;
                if assignment[k] < options[k].len() {
                    break;
                }
                assignment[k] = 0;
                k += 1;
            }
        }
    });
    best
}

fn enumerate_subsets(
    n: usize,
    k: usize,
    buf: &mut Vec<usize>,
    depth: usize,
    start: usize,
    visit: &mut impl FnMut(&[usize]),
) {
    if depth == k {
        visit(buf);
        return;
    }
    for j in start..n {
        buf[depth] = j;
        enumerate_subsets(n, k, buf, depth + 1, j + 1, visit);
    }
}

/// Brute-force Euclidean projection onto {x : C x <= s} by enumerating every
/// candidate active set and checking the KKT conditions directly.
pub fn active_set_projection(c: &[Vec<f64>], s: &[f64], x0: &[f64]) -> Option<Vec<f64>> {
    let m = c.len();
    let n = x0.len();
    let scale = 1.0 + s.iter().chain(x0).fold(0.0f64, |a, &b| a.max(b.abs()));
    let feas_tol = 1e-8 * scale;
    let mut best: Option<(f64, Vec<f64>)> = None;

    // The unconstrained point first.
    if (0..m).all(|i| row_dot(&c[i], x0) <= s[i] + feas_tol) {
        return Some(x0.to_vec());
    }

    for size in 1..=n.min(m) {
        let mut subset = vec![0usize; size];
        enumerate_subsets(m, size, &mut subset, 0, 0, &mut |subset: &[usize]| {
            // Solve (C_S C_S^T) mu = 2 (C_S x0 - s_S); z = x0 - C_S^T mu / 2.
            let gram: Vec<Vec<f64>> = subset
                .iter()
                .map(|&i| subset.iter().map(|&j| row_dot(&c[i], &c[j])).collect())
                .collect();
            let rhs: Vec<f64> = subset
                .iter()
                .map(|&i| 2.0 * (row_dot(&c[i], x0) - s[i]))
                .collect();
            let Some(mu) = gauss_solve(&gram, &rhs) else {
                return;
            };
            if mu.iter().any(|&v| v < -1e-7) {
                return;
            }
            let mut x = x0.to_vec();
            for (t, &i) in subset.iter().enumerate() {
                for (xj, cj) in x.iter_mut().zip(&c[i]) {
                    *xj -= cj * mu[t] / 2.0;
                }
            }
            if (0..m).all(|i| row_dot(&c[i], &x) <= s[i] + feas_tol) {
                let d2: f64 = x.iter().zip(x0).map(|(a, b)| (a - b) * (a - b)).sum();
                if best.as_ref().map_or(true, |(bd, _)| d2 < *bd) {
                    best = Some((d2, x));
                }
            }
        });
        if best.is_some() {
            // Any verified KKT point is the unique projection.
            break;
        }
    }
    best.map(|(_, x)| x)
}

fn row_dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Straight-line recomputation of the whole model forward pass with nested
/// loops and no tape, for fixture comparison.
pub fn reference_forward(
    params: &ModelParams,
    inputs: &ModelInputs,
    features: &FeatureMatrix,
) -> Vec<f64> {
    let dims = &params.dims;
    let n = dims.n_nodes;
    let fp = dims.latent_node;
    let slope = dims.leaky_slope;

    let h: Vec<Vec<f64>> = (0..n).map(|j| features.node_column(j)).collect();

    // Graph self-attention windows.
    let mut context = vec![Vec::new(); n];
    for (k, window) in params.gsat.iter().enumerate() {
        let z: Vec<Vec<f64>> = (0..n)
            .map(|j| {
                let w = &window.node_transform[j];
                (0..fp)
                    .map(|o| (0..h[j].len()).map(|i| w.at2(i, o) * h[j][i]).sum())
                    .collect()
            })
            .collect();
        let a = &window.attention.data;
        for i in 0..n {
            let support = &inputs.masks[k][i];
            let scores: Vec<f64> = support
                .iter()
                .map(|&j| {
                    let mut e = 0.0;
                    for o in 0..fp {
                        e += a[o] * z[i][o] + a[fp + o] * z[j][o];
                    }
                    if e >= 0.0 {
                        e
                    } else {
                        slope * e
                    }
                })
                .collect();
            let max = scores.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
            let exps: Vec<f64> = scores.iter().map(|&v| (v - max).exp()).collect();
            let denom: f64 = exps.iter().sum();
            let mut agg = vec![0.0; fp];
            for (t, &j) in support.iter().enumerate() {
                let alpha = exps[t] / denom;
                for o in 0..fp {
                    agg[o] += alpha * z[j][o];
                }
            }
            context[i].extend(agg);
        }
    }

    // Node-link attention.
    let ctx_dim = dims.context_dim();
    let keys: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let w = &params.nlat.key[i];
            (0..dims.qk_dim)
                .map(|o| (0..ctx_dim).map(|r| w.at2(r, o) * context[i][r]).sum())
                .collect()
        })
        .collect();
    let values: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let w = &params.nlat.value[i];
            (0..dims.link_latent)
                .map(|o| (0..ctx_dim).map(|r| w.at2(r, o) * context[i][r]).sum())
                .collect()
        })
        .collect();

    let mut out = Vec::with_capacity(dims.n_links);
    for l in 0..dims.n_links {
        let pe = &inputs.link_pe[l].data;
        let wq = &params.nlat.query[l];
        let q: Vec<f64> = (0..dims.qk_dim)
            .map(|o| (0..pe.len()).map(|r| wq.at2(r, o) * pe[r]).sum())
            .collect();
        let scores: Vec<f64> = (0..n)
            .map(|i| {
                let dot: f64 = q.iter().zip(&keys[i]).map(|(a, b)| a * b).sum();
                dot / (dims.qk_dim as f64).sqrt()
            })
            .collect();
        let max = scores.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        let exps: Vec<f64> = scores.iter().map(|&v| (v - max).exp()).collect();
        let denom: f64 = exps.iter().sum();
        let mut r = vec![0.0; dims.link_latent];
        for i in 0..n {
            let alpha = exps[i] / denom;
            for o in 0..dims.link_latent {
                r[o] += alpha * values[i][o];
            }
        }

        // MLP head.
        let mut x = r;
        for (w, b) in &params.mlp.hidden {
            let d_out = b.len();
            let mut next = vec![0.0; d_out];
            for o in 0..d_out {
                let mut v = b.data[o];
                for (i, xi) in x.iter().enumerate() {
                    v += w.at2(i, o) * xi;
                }
                next[o] = if v >= 0.0 { v } else { slope * v };
            }
            x = next;
        }
        let mut pre = params.mlp.out_bias.data[0];
        for (i, xi) in x.iter().enumerate() {
            pre += params.mlp.out_weight.at2(i, 0) * xi;
        }
        out.push(pre.tanh());
    }
    out
}

/// Deterministic random connected network with generator fleets, suitable
/// for oracle cross-checks (small variable counts).
pub fn random_network(rng: &mut ChaCha8Rng, n_nodes: u32, max_extra_links: u32, max_gens: u32) -> Network {
    let nodes: Vec<NodeRecord> = (1..=n_nodes)
        .map(|i| NodeRecord {
            id: NodeId(i),
            name: format!("n{i}"),
        })
        .collect();
    let mut links = Vec::new();
    let mut next_link = 1u32;
    for i in 2..=n_nodes {
        let parent = rng.gen_range(1..i);
        links.push(Link {
            id: LinkId(next_link),
            from_node: NodeId(parent),
            to_node: NodeId(i),
            f_nom: rng.gen_range(2.0..12.0),
            efficiency: 1.0,
            marginal_cost: if rng.gen_bool(0.5) { 0.0 } else { rng.gen_range(0.5..5.0) },
        });
        next_link += 1;
    }
    for _ in 0..rng.gen_range(0..=max_extra_links) {
        let a = rng.gen_range(1..=n_nodes);
        let b = rng.gen_range(1..=n_nodes);
        if a == b {
            continue;
        }
        links.push(Link {
            id: LinkId(next_link),
            from_node: NodeId(a),
            to_node: NodeId(b),
            f_nom: rng.gen_range(2.0..12.0),
            efficiency: 1.0,
            marginal_cost: if rng.gen_bool(0.5) { 0.0 } else { rng.gen_range(0.5..5.0) },
        });
        next_link += 1;
    }

    let carriers = [Carrier::Solar, Carrier::Wind, Carrier::Ocgt, Carrier::Coal];
    let n_gens = rng.gen_range(1..=max_gens);
    let generators = (1..=n_gens)
        .map(|g| {
            let carrier = carriers[rng.gen_range(0..4)];
            Generator {
                id: GenId(g),
                node_id: NodeId(rng.gen_range(1..=n_nodes)),
                carrier,
                p_nom: rng.gen_range(1.0..20.0_f64).round(),
                marginal_cost: match carrier {
                    Carrier::Solar => 0.010,
                    Carrier::Wind => 0.015,
                    Carrier::Ocgt => 121.89,
                    Carrier::Coal => 125.00,
                },
            }
        })
        .collect();
    Network::new(nodes, links, generators).unwrap()
}

/// Random snapshot with demand scaled toward feasibility for the given
/// network (not guaranteed; callers compare solver and oracle status).
pub fn random_snapshot(rng: &mut ChaCha8Rng, network: &Network) -> Snapshot {
    let n = network.n_nodes();
    let eta_wind: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..=1.0)).collect();
    let eta_solar: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..=1.0)).collect();
    let total_cap: f64 = (0..network.n_generators())
        .map(|g| gridflow_core::oracle::gen_capacity(
            network,
            &Snapshot {
                step: 0,
                demand: vec![0.0; n],
                eta_wind: eta_wind.clone(),
                eta_solar: eta_solar.clone(),
            },
            g,
        ))
        .sum();
    let mut weights: Vec<f64> = (0..n).map(|_| rng.gen_range(0.05..1.0)).collect();
    let wsum: f64 = weights.iter().sum();
    let budget = total_cap * rng.gen_range(0.3..0.9);
    for w in weights.iter_mut() {
        *w = *w / wsum * budget;
    }
    Snapshot {
        step: 0,
        demand: weights,
        eta_wind,
        eta_solar,
    }
}
