//! Model parameter tensors, their deterministic initialization, and the flat
//! views the optimizer and tape work against.
//!
//! Every transform matrix is per-node (or per-link for queries): the graph
//! attention windows carry one `F x F'` matrix per node plus an attention
//! vector, the node-link attention carries per-link query and per-node
//! key/value matrices, and a single MLP head is shared across links.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::tape::Tensor;
use crate::encoding::NODE_STATE_FEATURES;

/// Hyperparameters fixing every tensor shape in the model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDims {
    pub n_nodes: usize,
    pub n_links: usize,
    /// Positional encoding length m; input features per node are 3 + m.
    pub pe_dim: usize,
    /// Latent node state F' per attention window.
    pub latent_node: usize,
    /// Hop radius of each attention window; strictly increasing.
    pub window_hops: Vec<usize>,
    /// Query/key width V of the node-link attention.
    pub qk_dim: usize,
    /// Latent feature count U per link.
    pub link_latent: usize,
    /// Hidden layer widths of the MLP head.
    pub mlp_hidden: Vec<usize>,
    /// Negative slope of every LeakyReLU.
    pub leaky_slope: f64,
}

impl ModelDims {
    pub fn n_windows(&self) -> usize {
        self.window_hops.len()
    }

    /// Input features per node: demand, eta_wind, eta_solar, then encoding.
    pub fn feat_in(&self) -> usize {
        NODE_STATE_FEATURES + self.pe_dim
    }

    /// Concatenated latent width K * F'.
    pub fn context_dim(&self) -> usize {
        self.n_windows() * self.latent_node
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.n_nodes == 0 || self.n_links == 0 {
            return Err("network must have nodes and links".to_string());
        }
        if self.window_hops.is_empty() {
            return Err("need at least one attention window".to_string());
        }
        if !self.window_hops.windows(2).all(|w| w[0] < w[1]) {
            return Err(format!(
                "window hops must be strictly increasing, got {:?}",
                self.window_hops
            ));
        }
        if self.latent_node == 0 || self.qk_dim == 0 || self.link_latent == 0 {
            return Err("latent dimensions must be positive".to_string());
        }
        Ok(())
    }
}

/// One graph self-attention window: a transform per node and the shared
/// attention vector.
#[derive(Debug, Clone, PartialEq)]
pub struct GsatWindow {
    /// Per-node transforms, each (F, F').
    pub node_transform: Vec<Tensor>,
    /// Attention vector of length 2 F'.
    pub attention: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NlatParams {
    /// Per-link query transforms, each (2m, V).
    pub query: Vec<Tensor>,
    /// Per-node key transforms, each (K F', V).
    pub key: Vec<Tensor>,
    /// Per-node value transforms, each (K F', U).
    pub value: Vec<Tensor>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    /// Hidden (weight, bias) pairs; weight k is (d_{k-1}, d_k).
    pub hidden: Vec<(Tensor, Tensor)>,
    /// Output weight (d_R, 1).
    pub out_weight: Tensor,
    /// Output bias, scalar.
    pub out_bias: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub dims: ModelDims,
    pub gsat: Vec<GsatWindow>,
    pub nlat: NlatParams,
    pub mlp: MlpParams,
}

impl ModelParams {
    /// All tensors in a fixed order: per window the node transforms then the
    /// attention vector; NLAT queries, keys, values; MLP weights and biases.
    pub fn flat(&self) -> Vec<&Tensor> {
        let mut out = Vec::with_capacity(self.n_tensors());
        for w in &self.gsat {
            out.extend(w.node_transform.iter());
            out.push(&w.attention);
        }
        out.extend(self.nlat.query.iter());
        out.extend(self.nlat.key.iter());
        out.extend(self.nlat.value.iter());
        for (w, b) in &self.mlp.hidden {
            out.push(w);
            out.push(b);
        }
        out.push(&self.mlp.out_weight);
        out.push(&self.mlp.out_bias);
        out
    }

    pub fn flat_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::with_capacity(self.n_tensors());
        for w in &mut self.gsat {
            out.extend(w.node_transform.iter_mut());
            out.push(&mut w.attention);
        }
        out.extend(self.nlat.query.iter_mut());
        out.extend(self.nlat.key.iter_mut());
        out.extend(self.nlat.value.iter_mut());
        for (w, b) in &mut self.mlp.hidden {
            out.push(w);
            out.push(b);
        }
        out.push(&mut self.mlp.out_weight);
        out.push(&mut self.mlp.out_bias);
        out
    }

    /// Owned copies of all tensors, in flat order.
    pub fn flat_cloned(&self) -> Vec<Tensor> {
        self.flat().into_iter().cloned().collect()
    }

    /// Overwrites all tensors from a flat list (shapes must match).
    pub fn load_flat(&mut self, tensors: &[Tensor]) {
        let mut slots = self.flat_mut();
        assert_eq!(slots.len(), tensors.len(), "flat tensor count mismatch");
        for (slot, t) in slots.iter_mut().zip(tensors) {
            assert_eq!(slot.shape, t.shape, "flat tensor shape mismatch");
            slot.data.copy_from_slice(&t.data);
        }
    }

    pub fn n_tensors(&self) -> usize {
        let k = self.dims.n_windows();
        k * (self.dims.n_nodes + 1)
            + self.dims.n_links
            + 2 * self.dims.n_nodes
            + 2 * self.dims.mlp_hidden.len()
            + 2
    }

    pub fn n_scalars(&self) -> usize {
        self.flat().iter().map(|t| t.len()).sum()
    }

    /// Named ranges over the flat tensor order, one per parameter group.
    /// Used to address gradient checks at every group.
    pub fn group_ranges(&self) -> Vec<(String, std::ops::Range<usize>)> {
        let mut out = Vec::new();
        let mut at = 0;
        for (k, _) in self.gsat.iter().enumerate() {
            let n = self.dims.n_nodes;
            out.push((format!("gsat_w{k}_transform"), at..at + n));
            at += n;
            out.push((format!("gsat_w{k}_attention"), at..at + 1));
            at += 1;
        }
        out.push(("nlat_query".to_string(), at..at + self.dims.n_links));
        at += self.dims.n_links;
        out.push(("nlat_key".to_string(), at..at + self.dims.n_nodes));
        at += self.dims.n_nodes;
        out.push(("nlat_value".to_string(), at..at + self.dims.n_nodes));
        at += self.dims.n_nodes;
        for k in 0..self.dims.mlp_hidden.len() {
            out.push((format!("mlp_weight{k}"), at..at + 1));
            at += 1;
            out.push((format!("mlp_bias{k}"), at..at + 1));
            at += 1;
        }
        out.push(("mlp_out_weight".to_string(), at..at + 1));
        at += 1;
        out.push(("mlp_out_bias".to_string(), at..at + 1));
        out
    }
}

impl ModelParams {
    /// Rebuilds structured parameters from tensors in flat order, verifying
    /// every shape against the dims.
    pub fn from_flat(dims: ModelDims, tensors: Vec<Tensor>) -> Result<ModelParams, String> {
        let mut template = init_params(0, &dims);
        if tensors.len() != template.n_tensors() {
            return Err(format!(
                "expected {} tensors, got {}",
                template.n_tensors(),
                tensors.len()
            ));
        }
        {
            let slots = template.flat_mut();
            for (slot, t) in slots.into_iter().zip(&tensors) {
                if slot.shape != t.shape {
                    return Err(format!(
                        "tensor shape mismatch: expected {:?}, got {:?}",
                        slot.shape, t.shape
                    ));
                }
                slot.data.copy_from_slice(&t.data);
            }
        }
        Ok(template)
    }
}

fn uniform_fan(rng: &mut ChaCha8Rng, shape: &[usize], fan_in: usize, fan_out: usize) -> Tensor {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let len = shape.iter().product();
    let data = (0..len).map(|_| rng.gen_range(-bound..=bound)).collect();
    Tensor::from_vec(shape, data)
}

/// Deterministic fan-scaled uniform initialization: weights in
/// +-sqrt(6/(fan_in+fan_out)), biases zero.
pub fn init_params(seed: u64, dims: &ModelDims) -> ModelParams {
    dims.validate().expect("valid model dims");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let f_in = dims.feat_in();
    let fp = dims.latent_node;
    let ctx = dims.context_dim();
    let two_m = 2 * dims.pe_dim;

    let gsat = dims
        .window_hops
        .iter()
        .map(|_| GsatWindow {
            node_transform: (0..dims.n_nodes)
                .map(|_| uniform_fan(&mut rng, &[f_in, fp], f_in, fp))
                .collect(),
            attention: uniform_fan(&mut rng, &[2 * fp], 2 * fp, 1),
        })
        .collect();

    let nlat = NlatParams {
        query: (0..dims.n_links)
            .map(|_| uniform_fan(&mut rng, &[two_m, dims.qk_dim], two_m, dims.qk_dim))
            .collect(),
        key: (0..dims.n_nodes)
            .map(|_| uniform_fan(&mut rng, &[ctx, dims.qk_dim], ctx, dims.qk_dim))
            .collect(),
        value: (0..dims.n_nodes)
            .map(|_| uniform_fan(&mut rng, &[ctx, dims.link_latent], ctx, dims.link_latent))
            .collect(),
    };

    let mut hidden = Vec::new();
    let mut d_prev = dims.link_latent;
    for &d in &dims.mlp_hidden {
        hidden.push((
            uniform_fan(&mut rng, &[d_prev, d], d_prev, d),
            Tensor::zeros(&[d]),
        ));
        d_prev = d;
    }
    let mlp = MlpParams {
        hidden,
        out_weight: uniform_fan(&mut rng, &[d_prev, 1], d_prev, 1),
        out_bias: Tensor::zeros(&[1]),
    };

    ModelParams {
        dims: dims.clone(),
        gsat,
        nlat,
        mlp,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dims() -> ModelDims {
        ModelDims {
            n_nodes: 4,
            n_links: 5,
            pe_dim: 3,
            latent_node: 6,
            window_hops: vec![1, 2],
            qk_dim: 4,
            link_latent: 7,
            mlp_hidden: vec![8, 8],
            leaky_slope: 0.2,
        }
    }

    #[test]
    fn same_seed_same_params() {
        let a = init_params(42, &dims());
        let b = init_params(42, &dims());
        assert_eq!(a, b);
        let c = init_params(43, &dims());
        assert_ne!(a, c);
    }

    #[test]
    fn entries_bounded_by_sqrt6() {
        let p = init_params(7, &dims());
        let bound = 6.0_f64.sqrt();
        for t in p.flat() {
            for &v in &t.data {
                assert!(v.abs() <= bound);
            }
        }
    }

    #[test]
    fn biases_start_at_zero() {
        let p = init_params(7, &dims());
        for (_, b) in &p.mlp.hidden {
            assert!(b.data.iter().all(|&v| v == 0.0));
        }
        assert_eq!(p.mlp.out_bias.data, vec![0.0]);
    }

    #[test]
    fn flat_count_matches_formula() {
        let p = init_params(1, &dims());
        assert_eq!(p.flat().len(), p.n_tensors());
        let ranges = p.group_ranges();
        let covered: usize = ranges.iter().map(|(_, r)| r.len()).sum();
        assert_eq!(covered, p.n_tensors());
        assert_eq!(ranges.last().unwrap().1.end, p.n_tensors());
    }

    #[test]
    fn empirical_mean_near_zero() {
        // Uniform(-b, b) has mean 0 and sd b/sqrt(3); the sample mean over n
        // draws should land within 3 sd / sqrt(n).
        let big = ModelDims {
            n_nodes: 40,
            n_links: 60,
            pe_dim: 8,
            latent_node: 16,
            window_hops: vec![1, 3, 5],
            qk_dim: 16,
            link_latent: 32,
            mlp_hidden: vec![32, 32],
            leaky_slope: 0.2,
        };
        let p = init_params(123, &big);
        // Pool standardized draws (scale each tensor by its own bound).
        let mut n = 0usize;
        let mut sum = 0.0f64;
        for t in p.flat() {
            if t.shape.len() != 2 {
                continue;
            }
            let bound = (6.0 / (t.shape[0] + t.shape[1]) as f64).sqrt();
            for &v in &t.data {
                sum += v / bound;
                n += 1;
            }
        }
        assert!(n > 100_000, "need a large sample, got {n}");
        let mean = sum / n as f64;
        let sd = 1.0 / 3.0_f64.sqrt();
        assert!(
            mean.abs() < 3.0 * sd / (n as f64).sqrt(),
            "sample mean {mean} too far from 0 for n = {n}"
        );
    }
}
