//! Projection cross-checks: the NNLS-based projection against a brute-force
//! active-set oracle, plus idempotence and non-expansiveness.

mod common;

use common::{active_set_projection, random_network, random_snapshot};
use gridflow_core::datagen::Snapshot;
use gridflow_core::grid::{Carrier, GenId, Generator, Link, LinkId, Network, NodeId, NodeRecord};
use gridflow_core::oracle::project_feasible;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

fn project_constraints(net: &Network, snap: &Snapshot) -> (Vec<Vec<f64>>, Vec<f64>) {
    // Mirror of the projection polytope, assembled independently: flow box
    // rows then node-total interval rows.
    let n = net.n_nodes();
    let n_link = net.n_links();
    let avail = net.available_capacity(&snap.eta_wind, &snap.eta_solar);
    let mut c = Vec::new();
    let mut s = Vec::new();
    for l in 0..n_link {
        let mut row = vec![0.0; n_link];
        row[l] = 1.0;
        c.push(row.clone());
        s.push(net.links()[l].f_nom);
        row[l] = -1.0;
        c.push(row);
        s.push(net.links()[l].f_nom);
    }
    for j in 0..n {
        let mut row = vec![0.0; n_link];
        for l in 0..n_link {
            let (from, to) = net.link_endpoints(l);
            if from == j {
                row[l] += 1.0;
            }
            if to == j {
                row[l] -= 1.0;
            }
        }
        c.push(row.clone());
        s.push(avail[j] - snap.demand[j]);
        for v in row.iter_mut() {
            *v = -*v;
        }
        c.push(row);
        s.push(snap.demand[j]);
    }
    (c, s)
}

#[test]
fn feasible_input_is_returned_exactly() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let net = random_network(&mut rng, 3, 2, 4);
    let snap = random_snapshot(&mut rng, &net);
    // The zero flow vector is feasible whenever demand <= local capacity is
    // not required... it must satisfy node intervals; craft a safe case:
    // demand zero everywhere.
    let snap = Snapshot {
        step: 0,
        demand: vec![0.0; net.n_nodes()],
        eta_wind: snap.eta_wind,
        eta_solar: snap.eta_solar,
    };
    let f_hat = vec![0.0; net.n_links()];
    let flows = project_feasible(&net, &snap, &f_hat).unwrap();
    assert_eq!(flows, vec![0.0; net.n_links()]);
}

#[test]
fn single_link_overflow_clips_to_nominal() {
    let net = Network::new(
        vec![
            NodeRecord { id: NodeId(1), name: "a".into() },
            NodeRecord { id: NodeId(2), name: "b".into() },
        ],
        vec![Link {
            id: LinkId(1),
            from_node: NodeId(1),
            to_node: NodeId(2),
            f_nom: 5.0,
            efficiency: 1.0,
            marginal_cost: 0.0,
        }],
        vec![
            Generator {
                id: GenId(1),
                node_id: NodeId(1),
                carrier: Carrier::Coal,
                p_nom: 100.0,
                marginal_cost: 125.0,
            },
            Generator {
                id: GenId(2),
                node_id: NodeId(2),
                carrier: Carrier::Coal,
                p_nom: 100.0,
                marginal_cost: 125.0,
            },
        ],
    )
    .unwrap();
    let snap = Snapshot {
        step: 0,
        demand: vec![10.0, 10.0],
        eta_wind: vec![0.0; 2],
        eta_solar: vec![0.0; 2],
    };
    // Normalized prediction 1.2 -> 6 MW, beyond the 5 MW limit; node
    // intervals stay slack thanks to the big generators.
    let flows = project_feasible(&net, &snap, &[1.2]).unwrap();
    assert!((flows[0] - 5.0).abs() < 1e-8, "got {}", flows[0]);
}

#[test]
fn matches_active_set_oracle_on_random_instances() {
    // 100 random infeasible predictions over 3-5 node grids; the projection
    // must agree with exhaustive active-set enumeration within 1e-6 MW.
    let mut rng = ChaCha8Rng::seed_from_u64(4242);
    let mut done = 0;
    while done < 100 {
        let n_nodes = rng.gen_range(3..=5);
        let net = random_network(&mut rng, n_nodes, 2, 5);
        if net.n_links() > 5 {
            continue;
        }
        let snap = random_snapshot(&mut rng, &net);
        let f_hat: Vec<f64> = (0..net.n_links())
            .map(|_| rng.gen_range(-1.0..=1.0))
            .collect();

        let (c, s) = project_constraints(&net, &snap);
        let x0: Vec<f64> = (0..net.n_links())
            .map(|l| f_hat[l] * net.links()[l].f_nom)
            .collect();
        let Some(expected) = active_set_projection(&c, &s, &x0) else {
            // Empty polytope (demand unservable); the library must refuse too.
            assert!(project_feasible(&net, &snap, &f_hat).is_err());
            continue;
        };
        let got = project_feasible(&net, &snap, &f_hat).unwrap();
        for (g, e) in got.iter().zip(&expected) {
            assert!(
                (g - e).abs() <= 1e-6,
                "projection mismatch: {got:?} vs {expected:?}"
            );
        }
        done += 1;
    }
}

#[test]
fn projection_is_idempotent() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for _ in 0..20 {
        let net = random_network(&mut rng, 4, 2, 5);
        let snap = random_snapshot(&mut rng, &net);
        let f_hat: Vec<f64> = (0..net.n_links())
            .map(|_| rng.gen_range(-1.0..=1.0))
            .collect();
        let Ok(once) = project_feasible(&net, &snap, &f_hat) else {
            continue;
        };
        let back_to_normalized: Vec<f64> = once
            .iter()
            .enumerate()
            .map(|(l, f)| f / net.links()[l].f_nom)
            .collect();
        let twice = project_feasible(&net, &snap, &back_to_normalized).unwrap();
        for (a, b) in once.iter().zip(&twice) {
            assert!((a - b).abs() <= 1e-8, "{once:?} vs {twice:?}");
        }
    }
}

#[test]
fn projection_is_non_expansive() {
    let mut rng = ChaCha8Rng::seed_from_u64(123);
    for _ in 0..20 {
        let net = random_network(&mut rng, 4, 2, 5);
        let snap = random_snapshot(&mut rng, &net);
        let a_hat: Vec<f64> = (0..net.n_links()).map(|_| rng.gen_range(-1.0..=1.0)).collect();
        let b_hat: Vec<f64> = (0..net.n_links()).map(|_| rng.gen_range(-1.0..=1.0)).collect();
        let (Ok(pa), Ok(pb)) = (
            project_feasible(&net, &snap, &a_hat),
            project_feasible(&net, &snap, &b_hat),
        ) else {
            continue;
        };
        let dist = |x: &[f64], y: &[f64]| -> f64 {
            x.iter()
                .zip(y)
                .map(|(u, v)| (u - v) * (u - v))
                .sum::<f64>()
                .sqrt()
        };
        let xa: Vec<f64> = a_hat
            .iter()
            .enumerate()
            .map(|(l, f)| f * net.links()[l].f_nom)
            .collect();
        let xb: Vec<f64> = b_hat
            .iter()
            .enumerate()
            .map(|(l, f)| f * net.links()[l].f_nom)
            .collect();
        assert!(dist(&pa, &pb) <= dist(&xa, &xb) + 1e-9);
    }
}

#[test]
fn projected_totals_land_inside_capacity_interval() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..20 {
        let net = random_network(&mut rng, 4, 2, 5);
        let snap = random_snapshot(&mut rng, &net);
        let f_hat: Vec<f64> = (0..net.n_links()).map(|_| rng.gen_range(-1.0..=1.0)).collect();
        let Ok(flows) = project_feasible(&net, &snap, &f_hat) else {
            continue;
        };
        let avail = net.available_capacity(&snap.eta_wind, &snap.eta_solar);
        let mut totals = snap.demand.clone();
        for (l, &f) in flows.iter().enumerate() {
            let (from, to) = net.link_endpoints(l);
            totals[from] += f;
            totals[to] -= f;
        }
        for (j, &t) in totals.iter().enumerate() {
            assert!(
                t >= -1e-6 && t <= avail[j] + 1e-6,
                "total {t} at node {j} outside [0, {}]",
                avail[j]
            );
        }
        for (l, &f) in flows.iter().enumerate() {
            assert!(f.abs() <= net.links()[l].f_nom + 1e-6);
        }
    }
}
