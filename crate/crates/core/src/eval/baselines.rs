//! Data-driven baselines the attention model is compared against: a ridge
//! linear regressor and a k-nearest-neighbor regressor. Both consume flat
//! (demand, weather) feature vectors without positional encoding and emit
//! normalized flows clipped to [-1, 1].

use nalgebra::{DMatrix, DVector};

use super::EvalError;
use crate::datagen::Snapshot;
use crate::grid::{Carrier, Network};

/// Ridge term keeping the normal equations invertible on degenerate designs.
const RIDGE: f64 = 1e-8;
pub const KNN_NEIGHBORS: usize = 5;

/// Flat baseline features for one snapshot: normalized demand, then wind and
/// solar coefficients (zero where the node lacks that carrier).
pub fn baseline_features(network: &Network, snapshot: &Snapshot, demand_max: &[f64]) -> Vec<f64> {
    let n = network.n_nodes();
    let mut out = Vec::with_capacity(3 * n);
    for j in 0..n {
        out.push(snapshot.demand[j] / demand_max[j]);
    }
    for j in 0..n {
        let has = network
            .generators_at(j)
            .iter()
            .any(|&g| network.generators()[g].carrier == Carrier::Wind);
        out.push(if has { snapshot.eta_wind[j] } else { 0.0 });
    }
    for j in 0..n {
        let has = network
            .generators_at(j)
            .iter()
            .any(|&g| network.generators()[g].carrier == Carrier::Solar);
        out.push(if has { snapshot.eta_solar[j] } else { 0.0 });
    }
    out
}

/// Least-squares linear map with an intercept, solved by ridge-stabilized
/// normal equations. Predictions are clipped to [-1, 1].
pub fn baseline_lr(
    train_x: &[Vec<f64>],
    train_y: &[Vec<f64>],
    test_x: &[Vec<f64>],
) -> Result<Vec<Vec<f64>>, EvalError> {
    if train_x.is_empty() || test_x.is_empty() {
        return Err(EvalError::Empty);
    }
    if train_x.len() != train_y.len() {
        return Err(EvalError::Shape(format!(
            "{} feature rows but {} label rows",
            train_x.len(),
            train_y.len()
        )));
    }
    let s = train_x.len();
    let d = train_x[0].len();
    let out_dim = train_y[0].len();

    // Design matrix with a trailing intercept column.
    let mut x = DMatrix::zeros(s, d + 1);
    for (r, row) in train_x.iter().enumerate() {
        if row.len() != d {
            return Err(EvalError::Shape("ragged feature rows".to_string()));
        }
        for (c, v) in row.iter().enumerate() {
            x[(r, c)] = *v;
        }
        x[(r, d)] = 1.0;
    }
    let mut y = DMatrix::zeros(s, out_dim);
    for (r, row) in train_y.iter().enumerate() {
        if row.len() != out_dim {
            return Err(EvalError::Shape("ragged label rows".to_string()));
        }
        for (c, v) in row.iter().enumerate() {
            y[(r, c)] = *v;
        }
    }

    let xtx = x.transpose() * &x + DMatrix::identity(d + 1, d + 1) * RIDGE;
    let xty = x.transpose() * &y;
    let beta = xtx
        .lu()
        .solve(&xty)
        .ok_or_else(|| EvalError::Shape("normal equations singular".to_string()))?;

    let predict = |row: &Vec<f64>| -> Result<Vec<f64>, EvalError> {
        if row.len() != d {
            return Err(EvalError::Shape("test feature width mismatch".to_string()));
        }
        let mut xt = DVector::zeros(d + 1);
        for (c, v) in row.iter().enumerate() {
            xt[c] = *v;
        }
        xt[d] = 1.0;
        let pred = beta.transpose() * xt;
        Ok(pred.iter().map(|v| v.clamp(-1.0, 1.0)).collect())
    };
    test_x.iter().map(predict).collect()
}

/// Mean of the k nearest training labels under Euclidean distance, ties
/// broken by training index. Predictions are clipped to [-1, 1].
pub fn baseline_knn(
    train_x: &[Vec<f64>],
    train_y: &[Vec<f64>],
    test_x: &[Vec<f64>],
    k: usize,
) -> Result<Vec<Vec<f64>>, EvalError> {
    if train_x.is_empty() || test_x.is_empty() || k == 0 {
        return Err(EvalError::Empty);
    }
    if train_x.len() != train_y.len() {
        return Err(EvalError::Shape(format!(
            "{} feature rows but {} label rows",
            train_x.len(),
            train_y.len()
        )));
    }
    let k = k.min(train_x.len());
    let out_dim = train_y[0].len();

    let mut out = Vec::with_capacity(test_x.len());
    for query in test_x {
        let mut dist: Vec<(f64, usize)> = train_x
            .iter()
            .enumerate()
            .map(|(i, row)| {
                let d2: f64 = row
                    .iter()
                    .zip(query)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                (d2, i)
            })
            .collect();
        dist.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let mut pred = vec![0.0; out_dim];
        for &(_, i) in dist.iter().take(k) {
            for (p, v) in pred.iter_mut().zip(&train_y[i]) {
                *p += v / k as f64;
            }
        }
        pred.iter_mut().for_each(|v| *v = v.clamp(-1.0, 1.0));
        out.push(pred);
    }
    Ok(out)
}

/// Predicts the per-link mean of the training labels for every test row;
/// the reference point for "did the model learn anything".
pub fn baseline_constant_mean(train_y: &[Vec<f64>], n_test: usize) -> Result<Vec<Vec<f64>>, EvalError> {
    if train_y.is_empty() || n_test == 0 {
        return Err(EvalError::Empty);
    }
    let out_dim = train_y[0].len();
    let mut mean = vec![0.0; out_dim];
    for row in train_y {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v / train_y.len() as f64;
        }
    }
    Ok(vec![mean; n_test])
}
