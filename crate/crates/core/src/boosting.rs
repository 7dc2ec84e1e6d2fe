//! Least-squares gradient boosted regression trees.
//!
//! Trees are grown level by level with an exact split search: every feature
//! is presorted once per fit, and each level sweeps those orders while
//! routing rows to their current node. Split search is parallel over
//! features; per-feature results are reduced in feature order so the fitted
//! model does not depend on the number of threads.

use ndarray::ArrayView2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, UpliftError};

const NO_SLOT: u32 = u32::MAX;
const MODEL_FORMAT: &str = "ipc-uplift/gbm";
const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GbmConfig {
    pub max_iterations: usize,
    pub learning_rate: f64,
    pub max_depth: usize,
    pub min_samples_leaf: usize,
    /// Share of rows held out for early stopping.
    pub validation_fraction: f64,
    /// Consecutive non-improving iterations before stopping.
    pub patience: usize,
    /// Minimum decrease of validation MSE that counts as an improvement.
    pub tol: f64,
    pub seed: u64,
}

impl Default for GbmConfig {
    fn default() -> Self {
        Self {
            max_iterations: 1000,
            learning_rate: 0.1,
            max_depth: 3,
            min_samples_leaf: 20,
            validation_fraction: 0.1,
            patience: 10,
            tol: 1e-4,
            seed: 0,
        }
    }
}

impl GbmConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(UpliftError::InvalidConfig(m));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be > 0, got {}", self.learning_rate));
        }
        if self.max_depth == 0 {
            return bad("max_depth must be >= 1".into());
        }
        if self.min_samples_leaf == 0 {
            return bad("min_samples_leaf must be >= 1".into());
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return bad(format!(
                "validation_fraction must be in (0, 1), got {}",
                self.validation_fraction
            ));
        }
        if self.patience == 0 {
            return bad("patience must be >= 1".into());
        }
        if !(self.tol >= 0.0) {
            return bad(format!("tol must be >= 0, got {}", self.tol));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Node {
    /// `x[feature] < threshold` goes left, everything else right.
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        value: f64,
        samples: usize,
    },
}

/// Binary regression tree; `nodes[0]` is the root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionTree {
    pub nodes: Vec<Node>,
}

impl RegressionTree {
    pub fn predict_row(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if x[feature] < threshold { left } else { right },
                Node::Leaf { value, .. } => return value,
            }
        }
    }

    pub fn leaves(&self) -> impl Iterator<Item = (f64, usize)> + '_ {
        self.nodes.iter().filter_map(|n| match *n {
            Node::Leaf { value, samples } => Some((value, samples)),
            Node::Split { .. } => None,
        })
    }

    pub fn n_leaves(&self) -> usize {
        self.leaves().count()
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], i: usize) -> usize {
            match nodes[i] {
                Node::Split { left, right, .. } => 1 + walk(nodes, left).max(walk(nodes, right)),
                Node::Leaf { .. } => 0,
            }
        }
        walk(&self.nodes, 0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbmModel {
    pub base_prediction: f64,
    pub trees: Vec<RegressionTree>,
    pub learning_rate: f64,
    /// Trees kept after early stopping (the best validation iteration).
    pub iterations_used: usize,
    pub n_features: usize,
    /// Training-split MSE after each iteration run; entry 0 is the base model.
    pub train_loss: Vec<f64>,
    /// Validation-split MSE, aligned with `train_loss`.
    pub valid_loss: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format: String,
    version: u32,
    model: GbmModel,
}

impl GbmModel {
    pub fn predict_row(&self, x: &[f64]) -> f64 {
        let sum: f64 = self.trees.iter().map(|t| t.predict_row(x)).sum();
        self.base_prediction + self.learning_rate * sum
    }

    pub fn predict(&self, features: ArrayView2<'_, f64>) -> Result<Vec<f64>> {
        if features.ncols() != self.n_features {
            return Err(UpliftError::WidthMismatch {
                expected: self.n_features,
                got: features.ncols(),
            });
        }
        let mut buf = vec![0.0; self.n_features];
        Ok(features
            .rows()
            .into_iter()
            .map(|row| {
                buf.iter_mut().zip(row.iter()).for_each(|(b, &v)| *b = v);
                self.predict_row(&buf)
            })
            .collect())
    }

    /// Versioned JSON document; floats round-trip exactly.
    pub fn to_text(&self) -> String {
        serde_json::to_string_pretty(&ModelFile {
            format: MODEL_FORMAT.into(),
            version: MODEL_FORMAT_VERSION,
            model: self.clone(),
        })
        .expect("model serialization is infallible")
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let file: ModelFile =
            serde_json::from_str(text).map_err(|e| UpliftError::ModelFormat(e.to_string()))?;
        if file.format != MODEL_FORMAT || file.version != MODEL_FORMAT_VERSION {
            return Err(UpliftError::ModelFormat(format!(
                "unsupported format {} v{}",
                file.format, file.version
            )));
        }
        Ok(file.model)
    }
}

/// Column-major copy of the training rows with every feature presorted.
struct SplitIndex {
    columns: Vec<Vec<f64>>,
    order: Vec<Vec<u32>>,
}

#[derive(Clone, Copy)]
struct Candidate {
    gain: f64,
    threshold: f64,
}

impl SplitIndex {
    fn new(features: ArrayView2<'_, f64>, rows: &[usize]) -> Self {
        let columns: Vec<Vec<f64>> = (0..features.ncols())
            .map(|j| rows.iter().map(|&r| features[[r, j]]).collect())
            .collect();
        let order = columns
            .par_iter()
            .map(|col| {
                let mut idx: Vec<u32> = (0..col.len() as u32).collect();
                idx.sort_by(|&a, &b| col[a as usize].total_cmp(&col[b as usize]));
                idx
            })
            .collect();
        Self { columns, order }
    }

    fn n_rows(&self) -> usize {
        self.columns.first().map_or(0, Vec::len)
    }

    /// Grows one tree on `targets`; also returns the leaf node id of every row.
    fn grow(&self, targets: &[f64], max_depth: usize, min_leaf: usize) -> (RegressionTree, Vec<u32>) {
        let n = targets.len();
        let mut nodes = vec![Node::Leaf { value: 0.0, samples: n }];
        let mut node_of = vec![0u32; n];
        let mut frontier: Vec<usize> = vec![0];

        for _ in 0..max_depth {
            let mut slot_of = vec![NO_SLOT; nodes.len()];
            for (s, &id) in frontier.iter().enumerate() {
                slot_of[id] = s as u32;
            }
            let m = frontier.len();
            let mut count = vec![0usize; m];
            let mut sum = vec![0.0; m];
            for (r, &node) in node_of.iter().enumerate() {
                let s = slot_of[node as usize];
                if s != NO_SLOT {
                    count[s as usize] += 1;
                    sum[s as usize] += targets[r];
                }
            }
            let mean: Vec<f64> = (0..m)
                .map(|s| if count[s] > 0 { sum[s] / count[s] as f64 } else { 0.0 })
                .collect();
            // centered totals and spread, used for the gain and the purity check
            let mut total = vec![0.0; m];
            let mut sse = vec![0.0; m];
            let mut scale = vec![0.0; m];
            for (r, &node) in node_of.iter().enumerate() {
                let s = slot_of[node as usize];
                if s != NO_SLOT {
                    let s = s as usize;
                    let d = targets[r] - mean[s];
                    total[s] += d;
                    sse[s] += d * d;
                    scale[s] += targets[r] * targets[r];
                }
            }
            let splittable: Vec<bool> = (0..m)
                .map(|s| count[s] >= 2 * min_leaf && sse[s] > 1e-14 * scale[s])
                .collect();
            if !splittable.iter().any(|&b| b) {
                break;
            }

            let per_feature: Vec<Vec<Option<Candidate>>> = (0..self.columns.len())
                .into_par_iter()
                .map(|f| {
                    let col = &self.columns[f];
                    let mut cnt = vec![0usize; m];
                    let mut acc = vec![0.0; m];
                    let mut last = vec![f64::NEG_INFINITY; m];
                    let mut best: Vec<Option<Candidate>> = vec![None; m];
                    for &r in &self.order[f] {
                        let r = r as usize;
                        let s = slot_of[node_of[r] as usize];
                        if s == NO_SLOT || !splittable[s as usize] {
                            continue;
                        }
                        let s = s as usize;
                        let v = col[r];
                        let (n_l, n_r) = (cnt[s], count[s] - cnt[s]);
                        if n_l >= min_leaf && n_r >= min_leaf && v > last[s] {
                            let right = total[s] - acc[s];
                            let gain = acc[s] * acc[s] / n_l as f64 + right * right / n_r as f64
                                - total[s] * total[s] / count[s] as f64;
                            if best[s].is_none_or(|b| gain > b.gain) {
                                best[s] = Some(Candidate {
                                    gain,
                                    threshold: midpoint(last[s], v),
                                });
                            }
                        }
                        cnt[s] += 1;
                        acc[s] += targets[r] - mean[s];
                        last[s] = v;
                    }
                    best
                })
                .collect();

            // slot -> (feature, threshold, left id, right id)
            let mut chosen: Vec<Option<(usize, f64, u32, u32)>> = vec![None; m];
            let mut next = Vec::new();
            for s in 0..m {
                let mut best: Option<(usize, Candidate)> = None;
                for (f, cands) in per_feature.iter().enumerate() {
                    if let Some(c) = cands[s] {
                        if c.gain > 0.0 && best.is_none_or(|(_, b)| c.gain > b.gain) {
                            best = Some((f, c));
                        }
                    }
                }
                if let Some((feature, c)) = best {
                    let left = nodes.len();
                    let right = left + 1;
                    nodes.push(Node::Leaf { value: 0.0, samples: 0 });
                    nodes.push(Node::Leaf { value: 0.0, samples: 0 });
                    nodes[frontier[s]] = Node::Split {
                        feature,
                        threshold: c.threshold,
                        left,
                        right,
                    };
                    chosen[s] = Some((feature, c.threshold, left as u32, right as u32));
                    next.extend([left, right]);
                }
            }
            if next.is_empty() {
                break;
            }
            for (r, node) in node_of.iter_mut().enumerate() {
                let s = slot_of[*node as usize];
                if s == NO_SLOT {
                    continue;
                }
                if let Some((f, thr, l, rr)) = chosen[s as usize] {
                    *node = if self.columns[f][r] < thr { l } else { rr };
                }
            }
            frontier = next;
        }

        let mut count = vec![0usize; nodes.len()];
        let mut sum = vec![0.0; nodes.len()];
        for (r, &node) in node_of.iter().enumerate() {
            count[node as usize] += 1;
            sum[node as usize] += targets[r];
        }
        for (id, node) in nodes.iter_mut().enumerate() {
            if let Node::Leaf { value, samples } = node {
                *samples = count[id];
                *value = if count[id] > 0 { sum[id] / count[id] as f64 } else { 0.0 };
            }
        }
        (RegressionTree { nodes }, node_of)
    }
}

/// Threshold strictly above `lo` and at most `hi`.
fn midpoint(lo: f64, hi: f64) -> f64 {
    let mid = lo + (hi - lo) / 2.0;
    if mid > lo && mid <= hi {
        mid
    } else {
        hi
    }
}

fn check_inputs(features: ArrayView2<'_, f64>, targets: &[f64], min_rows: usize) -> Result<()> {
    if features.nrows() != targets.len() {
        return Err(UpliftError::InvalidData(format!(
            "{} feature rows but {} targets",
            features.nrows(),
            targets.len()
        )));
    }
    if features.ncols() == 0 {
        return Err(UpliftError::InvalidData("no features".into()));
    }
    if targets.len() < min_rows {
        return Err(UpliftError::TooFewRows {
            needed: min_rows,
            got: targets.len(),
        });
    }
    if let Some(i) = targets.iter().position(|v| !v.is_finite()) {
        return Err(UpliftError::InvalidData(format!("target {i} is not finite")));
    }
    Ok(())
}

/// Fits a single CART regression tree on all rows.
pub fn fit_tree(
    features: ArrayView2<'_, f64>,
    targets: &[f64],
    config: &GbmConfig,
) -> Result<RegressionTree> {
    config.validate()?;
    check_inputs(features, targets, 2 * config.min_samples_leaf)?;
    let rows: Vec<usize> = (0..targets.len()).collect();
    let index = SplitIndex::new(features, &rows);
    Ok(index.grow(targets, config.max_depth, config.min_samples_leaf).0)
}

fn mse(residuals: impl Iterator<Item = f64>) -> f64 {
    let (n, s) = residuals.fold((0usize, 0.0), |(n, s), r| (n + 1, s + r * r));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

/// Stagewise least-squares boosting with validation early stopping.
///
/// The base prediction is the mean of all targets. Trees are fit on the
/// training split; the model keeps the trees up to the last iteration that
/// improved validation MSE by more than `tol`.
pub fn fit_gbm(features: ArrayView2<'_, f64>, targets: &[f64], config: &GbmConfig) -> Result<GbmModel> {
    config.validate()?;
    check_inputs(features, targets, 10)?;
    let n = targets.len();
    let n_valid = ((n as f64 * config.validation_fraction).ceil() as usize).clamp(1, n - 1);

    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(config.seed));
    let mut valid: Vec<usize> = perm[..n_valid].to_vec();
    let mut train: Vec<usize> = perm[n_valid..].to_vec();
    valid.sort_unstable();
    train.sort_unstable();

    let base = targets.iter().sum::<f64>() / n as f64;
    let index = SplitIndex::new(features, &train);
    debug_assert_eq!(index.n_rows(), train.len());

    let mut residual: Vec<f64> = train.iter().map(|&r| targets[r] - base).collect();
    let valid_rows: Vec<Vec<f64>> = valid.iter().map(|&r| features.row(r).to_vec()).collect();
    let valid_y: Vec<f64> = valid.iter().map(|&r| targets[r]).collect();
    // sum of tree outputs per validation row, scaled by the learning rate at the end
    let mut valid_sum = vec![0.0; valid.len()];
    let valid_mse = |sum: &[f64]| {
        mse(valid_y
            .iter()
            .zip(sum)
            .map(|(y, s)| y - (base + config.learning_rate * s)))
    };

    let mut train_loss = vec![mse(residual.iter().copied())];
    let mut valid_loss = vec![valid_mse(&valid_sum)];
    let mut best = valid_loss[0];
    let mut best_iter = 0;
    let mut stale = 0;
    let mut trees = Vec::new();

    for it in 1..=config.max_iterations {
        let (tree, leaf_of) = index.grow(&residual, config.max_depth, config.min_samples_leaf);
        for (res, &leaf) in residual.iter_mut().zip(&leaf_of) {
            if let Node::Leaf { value, .. } = tree.nodes[leaf as usize] {
                *res -= config.learning_rate * value;
            }
        }
        for (s, x) in valid_sum.iter_mut().zip(&valid_rows) {
            *s += tree.predict_row(x);
        }
        trees.push(tree);
        train_loss.push(mse(residual.iter().copied()));
        let v = valid_mse(&valid_sum);
        valid_loss.push(v);
        if v < best - config.tol {
            best = v;
            best_iter = it;
            stale = 0;
        } else {
            stale += 1;
            if stale >= config.patience {
                break;
            }
        }
    }
    trees.truncate(best_iter);

    Ok(GbmModel {
        base_prediction: base,
        iterations_used: trees.len(),
        trees,
        learning_rate: config.learning_rate,
        n_features: features.ncols(),
        train_loss,
        valid_loss,
    })
}
