//! Forward pass of the attention model: masked multi-window graph
//! self-attention over nodes, node-link attention that turns node context
//! into per-link latents, and a shared Tanh-headed MLP that emits one
//! normalized flow per link.
//!
//! Each stage is a tape builder so the same code path serves inference and
//! training; attention matrices are read off the tape eagerly for
//! interpretability.

use nalgebra::DMatrix;

use super::params::{ModelDims, ModelParams};
use super::tape::{NnError, Tape, Tensor, ValueId};
use crate::encoding::{link_pe, FeatureMatrix, NodeEncoding};
use crate::grid::Network;

/// Per-network constants of the forward pass: attention mask supports per
/// window and positional encodings per link.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelInputs {
    /// masks[k][i] is the sorted list of nodes visible to node i in window k.
    pub masks: Vec<Vec<Vec<usize>>>,
    /// One (2m,) positional column per link.
    pub link_pe: Vec<Tensor>,
}

/// Builds masks and link encodings for a network under the given dims.
pub fn prepare_inputs(
    network: &Network,
    encoding: &NodeEncoding,
    dims: &ModelDims,
) -> Result<ModelInputs, NnError> {
    dims.validate().map_err(NnError::Shape)?;
    if network.n_nodes() != dims.n_nodes || network.n_links() != dims.n_links {
        return Err(NnError::Shape(format!(
            "dims expect {}x{} network, got {}x{}",
            dims.n_nodes,
            dims.n_links,
            network.n_nodes(),
            network.n_links()
        )));
    }
    if encoding.dim() != dims.pe_dim {
        return Err(NnError::Shape(format!(
            "encoding has {} components, dims expect {}",
            encoding.dim(),
            dims.pe_dim
        )));
    }
    let masks = dims
        .window_hops
        .iter()
        .map(|&hop| {
            (0..network.n_nodes())
                .map(|i| network.t_hop_neighborhood(i, hop))
                .collect()
        })
        .collect();
    let pe = link_pe(encoding, network);
    let link_pe = (0..network.n_links())
        .map(|l| Tensor::vector((0..pe.nrows()).map(|r| pe[(r, l)]).collect()))
        .collect();
    Ok(ModelInputs { masks, link_pe })
}

/// Per-window node attention matrices plus the link attention matrix.
/// Row i of a node matrix holds alpha_{i,j}; masked entries are exactly zero.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionRecord {
    pub node_att: Vec<DMatrix<f64>>,
    pub link_att: DMatrix<f64>,
}

/// Tape handles for every parameter tensor, registered in flat order.
pub struct ParamLeaves {
    pub gsat: Vec<(Vec<ValueId>, ValueId)>,
    pub query: Vec<ValueId>,
    pub key: Vec<ValueId>,
    pub value: Vec<ValueId>,
    pub mlp_hidden: Vec<(ValueId, ValueId)>,
    pub out_weight: ValueId,
    pub out_bias: ValueId,
}

/// Registers all parameters on the tape. The registration order must match
/// [`ModelParams::flat`] so gradients line up.
pub fn register_params(tape: &mut Tape<'_>, dims: &ModelDims) -> ParamLeaves {
    let mut next = 0usize;
    let mut take = |tape: &mut Tape<'_>| {
        let id = tape.param(next);
        next += 1;
        id
    };
    let gsat = (0..dims.n_windows())
        .map(|_| {
            let transforms = (0..dims.n_nodes).map(|_| take(tape)).collect();
            let attention = take(tape);
            (transforms, attention)
        })
        .collect();
    let query = (0..dims.n_links).map(|_| take(tape)).collect();
    let key = (0..dims.n_nodes).map(|_| take(tape)).collect();
    let value = (0..dims.n_nodes).map(|_| take(tape)).collect();
    let mlp_hidden = (0..dims.mlp_hidden.len())
        .map(|_| (take(tape), take(tape)))
        .collect();
    let out_weight = take(tape);
    let out_bias = take(tape);
    ParamLeaves {
        gsat,
        query,
        key,
        value,
        mlp_hidden,
        out_weight,
        out_bias,
    }
}

/// Multi-window masked graph self-attention.
///
/// Per window: scores e_ij = LeakyReLU(a . [W_i^T h_i || W_j^T h_j]) over the
/// window's mask, softmax rows, then aggregation h'_i = sum_j alpha_ij W_j^T
/// h_j. Window outputs concatenate into the node context.
pub fn gsat_forward(
    tape: &mut Tape<'_>,
    leaves: &[(Vec<ValueId>, ValueId)],
    node_features: &[ValueId],
    masks: &[Vec<Vec<usize>>],
    dims: &ModelDims,
) -> (Vec<ValueId>, Vec<DMatrix<f64>>) {
    let n = node_features.len();
    let fp = dims.latent_node;
    let mut per_window: Vec<Vec<ValueId>> = Vec::with_capacity(leaves.len());
    let mut node_att = Vec::with_capacity(leaves.len());

    for (k, (transforms, attention)) in leaves.iter().enumerate() {
        let z: Vec<ValueId> = (0..n)
            .map(|j| tape.linear(transforms[j], node_features[j]))
            .collect();
        let a_left = tape.slice(*attention, 0, fp);
        let a_right = tape.slice(*attention, fp, fp);
        let s: Vec<ValueId> = z.iter().map(|&zj| tape.dot(a_left, zj)).collect();
        let t: Vec<ValueId> = z.iter().map(|&zj| tape.dot(a_right, zj)).collect();

        let mut att = DMatrix::zeros(n, n);
        let mut h_prime = Vec::with_capacity(n);
        for i in 0..n {
            let support = &masks[k][i];
            let scores: Vec<ValueId> = support.iter().map(|&j| tape.add(s[i], t[j])).collect();
            let stacked = tape.concat(&scores);
            let activated = tape.leaky_relu(stacked, dims.leaky_slope);
            let alpha = tape.softmax(activated);
            for (m, &j) in support.iter().enumerate() {
                att[(i, j)] = tape.value(alpha).data[m];
            }
            let vectors: Vec<ValueId> = support.iter().map(|&j| z[j]).collect();
            h_prime.push(tape.weighted_sum(alpha, &vectors));
        }
        per_window.push(h_prime);
        node_att.push(att);
    }

    let context: Vec<ValueId> = (0..n)
        .map(|i| {
            let parts: Vec<ValueId> = per_window.iter().map(|w| w[i]).collect();
            tape.concat(&parts)
        })
        .collect();
    (context, node_att)
}

/// Node-link attention: per-link positional queries attend over encoded node
/// states with scaled dot products (softmax over all nodes), producing one
/// latent vector per link.
pub fn nlat_forward(
    tape: &mut Tape<'_>,
    query_leaves: &[ValueId],
    key_leaves: &[ValueId],
    value_leaves: &[ValueId],
    context: &[ValueId],
    link_pe: &[ValueId],
    dims: &ModelDims,
) -> (Vec<ValueId>, DMatrix<f64>) {
    let n = context.len();
    let n_links = link_pe.len();
    let keys: Vec<ValueId> = (0..n).map(|i| tape.linear(key_leaves[i], context[i])).collect();
    let values: Vec<ValueId> = (0..n)
        .map(|i| tape.linear(value_leaves[i], context[i]))
        .collect();

    let inv_sqrt_v = 1.0 / (dims.qk_dim as f64).sqrt();
    let mut link_att = DMatrix::zeros(n_links, n);
    let mut out = Vec::with_capacity(n_links);
    for l in 0..n_links {
        let q = tape.linear(query_leaves[l], link_pe[l]);
        let scores: Vec<ValueId> = keys.iter().map(|&ki| tape.dot(q, ki)).collect();
        let stacked = tape.concat(&scores);
        let scaled = tape.scale(stacked, inv_sqrt_v);
        let alpha = tape.softmax(scaled);
        for i in 0..n {
            link_att[(l, i)] = tape.value(alpha).data[i];
        }
        out.push(tape.weighted_sum(alpha, &values));
    }
    (out, link_att)
}

/// Shared MLP head: LeakyReLU hidden layers, Tanh output, one scalar flow
/// per link, all strictly inside (-1, 1).
pub fn mlp_forward(
    tape: &mut Tape<'_>,
    hidden: &[(ValueId, ValueId)],
    out_weight: ValueId,
    out_bias: ValueId,
    link_latents: &[ValueId],
    slope: f64,
) -> ValueId {
    let mut outputs = Vec::with_capacity(link_latents.len());
    for &r in link_latents {
        let mut x = r;
        for &(w, b) in hidden {
            let lin = tape.linear(w, x);
            let biased = tape.add(lin, b);
            x = tape.leaky_relu(biased, slope);
        }
        let lin = tape.linear(out_weight, x);
        let biased = tape.add(lin, out_bias);
        outputs.push(tape.tanh(biased));
    }
    tape.concat(&outputs)
}

pub struct ForwardArtifacts {
    /// (L,) normalized flows, each strictly inside (-1, 1).
    pub f_hat: ValueId,
    pub attention: AttentionRecord,
}

/// Runs the full model on one snapshot's features over an existing tape.
pub fn model_forward_on_tape(
    tape: &mut Tape<'_>,
    leaves: &ParamLeaves,
    inputs: &ModelInputs,
    features: &FeatureMatrix,
    dims: &ModelDims,
) -> Result<ForwardArtifacts, NnError> {
    if features.n_features() != dims.feat_in() || features.n_nodes() != dims.n_nodes {
        return Err(NnError::Shape(format!(
            "feature matrix is {}x{}, dims expect {}x{}",
            features.n_features(),
            features.n_nodes(),
            dims.feat_in(),
            dims.n_nodes
        )));
    }
    let node_features: Vec<ValueId> = (0..dims.n_nodes)
        .map(|j| tape.constant(Tensor::vector(features.node_column(j))))
        .collect();
    let link_pe: Vec<ValueId> = inputs
        .link_pe
        .iter()
        .map(|pe| tape.constant(pe.clone()))
        .collect();

    let (context, node_att) = gsat_forward(tape, &leaves.gsat, &node_features, &inputs.masks, dims);
    let (latents, link_att) = nlat_forward(
        tape,
        &leaves.query,
        &leaves.key,
        &leaves.value,
        &context,
        &link_pe,
        dims,
    );
    let f_hat = mlp_forward(
        tape,
        &leaves.mlp_hidden,
        leaves.out_weight,
        leaves.out_bias,
        &latents,
        dims.leaky_slope,
    );
    if let Some(op) = tape.poisoned() {
        return Err(NnError::NonFinite { op: op.to_string() });
    }
    Ok(ForwardArtifacts {
        f_hat,
        attention: AttentionRecord { node_att, link_att },
    })
}

/// Inference entry point: builds a throwaway tape and returns the normalized
/// flows with the attention record. Deterministic given params and features.
pub fn model_forward(
    params: &ModelParams,
    inputs: &ModelInputs,
    features: &FeatureMatrix,
) -> Result<(Vec<f64>, AttentionRecord), NnError> {
    let flat = params.flat();
    let mut tape = Tape::new(&flat);
    let leaves = register_params(&mut tape, &params.dims);
    let artifacts = model_forward_on_tape(&mut tape, &leaves, inputs, features, &params.dims)?;
    Ok((
        tape.value(artifacts.f_hat).data.clone(),
        artifacts.attention,
    ))
}
