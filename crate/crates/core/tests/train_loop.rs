//! Training-loop behavior on small fixtures: descent, overfitting capacity,
//! exact resumption, bit-reproducibility, and divergence handling.

mod common;

use std::collections::HashMap;

use gridflow_core::datagen::{build_dataset, synth_network, synth_series, CapacityProfile, Dataset};
use gridflow_core::encoding::{build_features, node_lpe};
use gridflow_core::eval::maape;
use gridflow_core::nn::{model_forward, prepare_inputs, ModelDims};
use gridflow_core::oracle::{solve_dcopf, OracleOptions, SolveStatus};
use gridflow_core::train::{
    adam_step, loss_value, lr_schedule, normalize_labels, train, AdamState, LossContext,
    StopReason, TrainConfig,
};

fn tiny_dims(net: &gridflow_core::grid::Network) -> ModelDims {
    ModelDims {
        n_nodes: net.n_nodes(),
        n_links: net.n_links(),
        pe_dim: 2,
        latent_node: 4,
        window_hops: vec![1, 2],
        qk_dim: 4,
        link_latent: 8,
        mlp_hidden: vec![8],
        leaky_slope: 0.2,
    }
}

fn fixture(seed: u64, n_nodes: usize, n_steps: usize) -> (Dataset, HashMap<u64, Vec<f64>>) {
    let net = synth_network(seed, n_nodes, 2.0, &CapacityProfile::default()).unwrap();
    let series = synth_series(seed, &net, n_steps).unwrap();
    let options = OracleOptions::default();
    let mut labels = HashMap::new();
    for snap in &series {
        let sol = solve_dcopf(&net, snap, &options).unwrap();
        assert_eq!(sol.status, SolveStatus::Optimal);
        labels.insert(snap.step, sol.flows);
    }
    let dataset = build_dataset(net, series, 0.05, false).unwrap();
    (dataset, labels)
}

#[test]
fn training_reduces_loss_on_toy_dataset() {
    let (dataset, labels) = fixture(41, 3, 200);
    let dims = tiny_dims(&dataset.network);
    let config = TrainConfig {
        epochs: 12,
        batch_size: 32,
        patience: 100,
        seed: 7,
        ..TrainConfig::default()
    };
    let outcome = train(&dataset, &labels, &dims, &config, None).unwrap();
    let first = outcome.log.first().unwrap().train_loss;
    let last = outcome.log.last().unwrap().train_loss;
    assert!(
        last < first,
        "no descent: first {first}, last {last} over {} epochs",
        outcome.log.len()
    );
}

/// A supply line: all generation at one end, consumers downstream, so every
/// link always carries nonzero flow and MAAPE has no zero-actual terms.
fn line_fixture(seed: u64, n_steps: usize) -> (Dataset, HashMap<u64, Vec<f64>>) {
    use gridflow_core::grid::{Carrier, GenId, Generator, Link, LinkId, Network, NodeId, NodeRecord};
    let node = |id: u32| NodeRecord { id: NodeId(id), name: format!("n{id}") };
    let link = |id: u32, a: u32, b: u32| Link {
        id: LinkId(id),
        from_node: NodeId(a),
        to_node: NodeId(b),
        f_nom: 5000.0,
        efficiency: 1.0,
        marginal_cost: 3.642,
    };
    let net = Network::new(
        vec![node(1), node(2), node(3)],
        vec![link(1, 1, 2), link(2, 2, 3)],
        vec![
            Generator {
                id: GenId(1),
                node_id: NodeId(1),
                carrier: Carrier::Wind,
                p_nom: 6000.0,
                marginal_cost: 0.015,
            },
            Generator {
                id: GenId(2),
                node_id: NodeId(1),
                carrier: Carrier::Coal,
                p_nom: 8000.0,
                marginal_cost: 125.0,
            },
        ],
    )
    .unwrap();
    let series = synth_series(seed, &net, n_steps).unwrap();
    let options = OracleOptions::default();
    let mut labels = HashMap::new();
    for snap in &series {
        let sol = solve_dcopf(&net, snap, &options).unwrap();
        assert_eq!(sol.status, SolveStatus::Optimal);
        labels.insert(snap.step, sol.flows);
    }
    let dataset = build_dataset(net, series, 0.05, false).unwrap();
    (dataset, labels)
}

#[test]
fn overfits_ten_snapshots() {
    // Capacity check: with a long budget and no early stopping the model
    // should pin 10 snapshots nearly exactly.
    let (dataset, labels) = line_fixture(5, 10);
    let dims = tiny_dims(&dataset.network);
    let config = TrainConfig {
        epochs: 2000,
        batch_size: 4,
        patience: 10_000,
        seed: 3,
        ..TrainConfig::default()
    };
    let outcome = train(&dataset, &labels, &dims, &config, None).unwrap();
    assert_eq!(outcome.stop, StopReason::EpochLimit);

    // Evaluate train MAAPE on flows with the final (resume) parameters.
    let net = &dataset.network;
    let params = outcome.resume_checkpoint.model_params().unwrap();
    let encoding = outcome.resume_checkpoint.node_encoding();
    let inputs = prepare_inputs(net, &encoding, &dims).unwrap();
    let mut actual = Vec::new();
    let mut forecast = Vec::new();
    for &i in &dataset.split.train {
        let snap = &dataset.snapshots[i];
        let features = build_features(net, snap, &dataset.demand_max, &encoding).unwrap();
        let (f_hat, _) = model_forward(&params, &inputs, &features).unwrap();
        let label = normalize_labels(net, &labels[&snap.step]).unwrap();
        actual.extend(label);
        forecast.extend(f_hat);
    }
    let err = maape(&actual, &forecast).unwrap();
    assert!(err < 0.05, "train MAAPE {err} too high for an overfit run");
}

#[test]
fn resume_reproduces_uninterrupted_run() {
    let (dataset, labels) = fixture(55, 3, 60);
    let dims = tiny_dims(&dataset.network);
    let base = TrainConfig {
        epochs: 6,
        batch_size: 16,
        patience: 100,
        seed: 11,
        ..TrainConfig::default()
    };

    let full = train(&dataset, &labels, &dims, &base, None).unwrap();

    let half_config = TrainConfig { epochs: 3, ..base.clone() };
    let half = train(&dataset, &labels, &dims, &half_config, None).unwrap();
    let resumed = train(
        &dataset,
        &labels,
        &dims,
        &base,
        Some(&half.resume_checkpoint),
    )
    .unwrap();

    // The resumed run must replay epochs 3..6 with identical losses, and the
    // final parameters must match the uninterrupted run bit for bit.
    assert_eq!(resumed.log.len(), 3);
    for (a, b) in full.log[3..].iter().zip(&resumed.log) {
        assert_eq!(a.epoch, b.epoch);
        assert_eq!(a.train_loss, b.train_loss, "epoch {} train loss differs", a.epoch);
        assert_eq!(a.val_loss, b.val_loss);
    }
    assert_eq!(
        full.resume_checkpoint.params,
        resumed.resume_checkpoint.params
    );
}

#[test]
fn training_is_bit_reproducible() {
    let (dataset, labels) = fixture(23, 3, 80);
    let dims = tiny_dims(&dataset.network);
    let config = TrainConfig {
        epochs: 4,
        batch_size: 16,
        seed: 9,
        ..TrainConfig::default()
    };
    let a = train(&dataset, &labels, &dims, &config, None).unwrap();
    let b = train(&dataset, &labels, &dims, &config, None).unwrap();
    assert_eq!(a.checkpoint.params, b.checkpoint.params);
    for (x, y) in a.log.iter().zip(&b.log) {
        assert_eq!(x.train_loss, y.train_loss);
        assert_eq!(x.val_loss, y.val_loss);
    }
}

#[test]
fn threaded_batches_match_serial() {
    let (dataset, labels) = fixture(29, 4, 60);
    let dims = tiny_dims(&dataset.network);
    let serial = TrainConfig {
        epochs: 3,
        batch_size: 16,
        seed: 5,
        threads: 1,
        ..TrainConfig::default()
    };
    let threaded = TrainConfig { threads: 3, ..serial.clone() };
    let a = train(&dataset, &labels, &dims, &serial, None).unwrap();
    let b = train(&dataset, &labels, &dims, &threaded, None).unwrap();
    assert_eq!(a.checkpoint.params, b.checkpoint.params);
}

#[test]
fn tiny_learning_rate_step_does_not_increase_loss() {
    let (dataset, labels) = fixture(61, 3, 40);
    let net = &dataset.network;
    let dims = tiny_dims(net);
    let config = TrainConfig::default();

    // Build one fixed batch by hand and take a single Adam step with a tiny
    // learning rate.
    let encoding = node_lpe(net, dims.pe_dim).unwrap();
    let inputs = prepare_inputs(net, &encoding, &dims).unwrap();
    let mut params = gridflow_core::nn::init_params(13, &dims);
    let mut adam = AdamState::new(&params);

    let batch: Vec<usize> = dataset.split.train.iter().take(8).copied().collect();
    let batch_loss = |params: &gridflow_core::nn::ModelParams| -> f64 {
        let mut total = 0.0;
        for &i in &batch {
            let snap = &dataset.snapshots[i];
            let features = build_features(net, snap, &dataset.demand_max, &encoding).unwrap();
            let (f_hat, _) = model_forward(params, &inputs, &features).unwrap();
            let label = normalize_labels(net, &labels[&snap.step]).unwrap();
            let ctx = LossContext::new(
                net,
                snap.demand.clone(),
                net.available_capacity(&snap.eta_wind, &snap.eta_solar),
            );
            total += loss_value(&f_hat, &label, &ctx, config.alpha);
        }
        total / batch.len() as f64
    };

    let before = batch_loss(&params);
    // Mean gradient over the same batch.
    let flat = params.flat();
    let mut grads: Vec<gridflow_core::nn::Tensor> = params
        .flat()
        .iter()
        .map(|t| gridflow_core::nn::Tensor::zeros(&t.shape))
        .collect();
    for &i in &batch {
        let snap = &dataset.snapshots[i];
        let features = build_features(net, snap, &dataset.demand_max, &encoding).unwrap();
        let mut tape = gridflow_core::nn::Tape::new(&flat);
        let leaves = gridflow_core::nn::register_params(&mut tape, &dims);
        let artifacts =
            gridflow_core::nn::model_forward_on_tape(&mut tape, &leaves, &inputs, &features, &dims)
                .unwrap();
        let label = normalize_labels(net, &labels[&snap.step]).unwrap();
        let ctx = LossContext::new(
            net,
            snap.demand.clone(),
            net.available_capacity(&snap.eta_wind, &snap.eta_solar),
        );
        let loss = gridflow_core::train::loss_on_tape(&mut tape, artifacts.f_hat, &label, &ctx, config.alpha);
        for (acc, g) in grads.iter_mut().zip(tape.backward(loss).unwrap()) {
            for (a, v) in acc.data.iter_mut().zip(&g.data) {
                *a += v / batch.len() as f64;
            }
        }
    }
    drop(flat);
    adam_step(&mut adam, &mut params, &grads, 1e-8).unwrap();
    let after = batch_loss(&params);
    assert!(
        after <= before + 1e-9,
        "tiny step increased loss: {before} -> {after}"
    );
}

#[test]
fn divergent_inputs_abort_with_best_checkpoint() {
    let (mut dataset, labels) = fixture(19, 3, 40);
    // Poisoned normalization produces non-finite features immediately.
    dataset.demand_max = vec![1e-308; dataset.network.n_nodes()];
    let dims = tiny_dims(&dataset.network);
    let config = TrainConfig {
        epochs: 3,
        seed: 2,
        ..TrainConfig::default()
    };
    let outcome = train(&dataset, &labels, &dims, &config, None).unwrap();
    assert_eq!(outcome.stop, StopReason::Diverged);
    // The returned checkpoint is the (untrained) best state, still intact.
    assert_eq!(outcome.checkpoint.params.len(), outcome.resume_checkpoint.params.len());
}

#[test]
fn schedule_is_flat_after_decay_horizon() {
    let config = TrainConfig::default();
    for step in [100u64, 150, 1000, 10_000] {
        assert_eq!(lr_schedule(step, &config), 1e-4);
    }
}
