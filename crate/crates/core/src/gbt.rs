//! Multiclass gradient-boosted trees with a softmax objective.
//!
//! Trees are grown level-wise with exact greedy splits over presorted
//! feature columns. Rows are put into a canonical order before fitting, so
//! the model does not depend on the order of the training table.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par;
use crate::table::FeatureTable;

/// Hyperparameters of one boosted ensemble.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GbtParams {
    pub n_estimators: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    pub min_leaf: usize,
    pub lambda: f64,
    pub seed: u64,
}

impl Default for GbtParams {
    fn default() -> Self {
        GbtParams {
            n_estimators: 140,
            max_depth: 4,
            learning_rate: 0.1,
            min_leaf: 1,
            lambda: 1.0,
            seed: 0,
        }
    }
}

impl GbtParams {
    /// Default search grid: rounds {60, 100, 140, 180} x depth {2, 3, 4, 5}.
    pub fn default_grid(base: GbtParams) -> Vec<GbtParams> {
        let mut out = Vec::new();
        for n_estimators in [60, 100, 140, 180] {
            for max_depth in [2, 3, 4, 5] {
                out.push(GbtParams {
                    n_estimators,
                    max_depth,
                    ..base
                });
            }
        }
        out
    }

    fn validate(&self) -> Result<()> {
        if self.n_estimators == 0 || self.min_leaf == 0 {
            return Err(Error::InvalidInput("n_estimators and min_leaf must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) || !(self.lambda >= 0.0) {
            return Err(Error::InvalidInput("learning_rate must be > 0 and lambda >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRule {
    pub f: usize,
    pub thr: f64,
}

/// A tree node. Samples with `x[f] <= thr` go to `l`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Node {
    Split { split: SplitRule, l: usize, r: usize },
    Leaf { leaf: f64 },
}

pub type Tree = Vec<Node>;

fn tree_value(tree: &[Node], x: &[f64]) -> f64 {
    let mut i = 0;
    loop {
        match tree[i] {
            Node::Leaf { leaf } => return leaf,
            Node::Split { split, l, r } => i = if x[split.f] <= split.thr { l } else { r },
        }
    }
}

fn tree_depth(tree: &[Node], i: usize) -> usize {
    match tree[i] {
        Node::Leaf { .. } => 0,
        Node::Split { l, r, .. } => 1 + tree_depth(tree, l).max(tree_depth(tree, r)),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbtMeta {
    pub params: GbtParams,
    pub feature_names: Vec<String>,
    pub training_ids: Vec<String>,
    /// Mean training log-loss after 0, 1, ..., n_estimators rounds.
    pub train_log_loss: Vec<f64>,
}

/// Fitted ensemble. `trees` is round-major: tree `r * classes + c` is the
/// class-`c` tree of round `r`. Leaf values already include the learning rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbtModel {
    pub classes: usize,
    pub learning_rate: f64,
    pub base_scores: Vec<f64>,
    pub trees: Vec<Tree>,
    pub meta: GbtMeta,
}

/// Numerically stable softmax.
pub fn softmax(scores: &[f64]) -> Vec<f64> {
    let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|v| v / z).collect()
}

fn log_loss(scores: &[Vec<f64>], y: &[usize]) -> f64 {
    let total: f64 = scores
        .iter()
        .zip(y)
        .map(|(s, &c)| {
            let m = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + s.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            lse - s[c]
        })
        .sum();
    total / y.len() as f64
}

impl GbtModel {
    pub fn n_rounds(&self) -> usize {
        self.trees.len() / self.classes
    }

    pub fn n_features(&self) -> usize {
        self.meta.feature_names.len()
    }

    pub fn max_tree_depth(&self) -> usize {
        self.trees.iter().map(|t| tree_depth(t, 0)).max().unwrap_or(0)
    }

    /// Raw per-class scores using the first `rounds` rounds.
    pub fn scores_at(&self, x: &[f64], rounds: usize) -> Result<Vec<f64>> {
        if x.len() != self.n_features() {
            return Err(Error::InvalidInput(format!(
                "vector has {} features, model expects {}",
                x.len(),
                self.n_features()
            )));
        }
        let mut s = self.base_scores.clone();
        for (t, tree) in self.trees.iter().take(rounds * self.classes).enumerate() {
            s[t % self.classes] += tree_value(tree, x);
        }
        Ok(s)
    }

    pub fn predict_proba(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(softmax(&self.scores_at(x, self.n_rounds())?))
    }

    pub fn predict_proba_at(&self, x: &[f64], rounds: usize) -> Result<Vec<f64>> {
        Ok(softmax(&self.scores_at(x, rounds)?))
    }

    /// The model made of the first `rounds` rounds. Identical to fitting with
    /// `n_estimators = rounds`.
    pub fn truncated(&self, rounds: usize) -> GbtModel {
        let rounds = rounds.min(self.n_rounds());
        let mut m = self.clone();
        m.trees.truncate(rounds * self.classes);
        m.meta.params.n_estimators = rounds;
        m.meta.train_log_loss.truncate(rounds + 1);
        m
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

fn cmp_rows(a: &[f64], b: &[f64]) -> Ordering {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(Ordering::Equal)
}

/// Fit an ensemble on every row of `table`.
pub fn gbt_fit(table: &FeatureTable, params: &GbtParams) -> Result<GbtModel> {
    params.validate()?;
    let n = table.len();
    if n == 0 {
        return Err(Error::InsufficientData("empty training table".into()));
    }
    let classes = crate::table::N_CLASSES;
    let p = table.columns.len();
    if let Some(r) = table.rows.iter().find(|r| r.values.iter().any(|v| !v.is_finite())) {
        return Err(Error::InvalidInput(format!(
            "case {} has a non-finite feature",
            r.case_id
        )));
    }
    let mut counts = vec![0usize; classes];
    for r in &table.rows {
        counts[r.label] += 1;
    }
    if counts.iter().filter(|&&c| c > 0).count() < 2 {
        return Err(Error::InsufficientData(
            "training data needs at least two classes".into(),
        ));
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        let (ra, rb) = (&table.rows[a], &table.rows[b]);
        ra.label.cmp(&rb.label).then_with(|| cmp_rows(&ra.values, &rb.values))
    });
    let y: Vec<usize> = order.iter().map(|&i| table.rows[i].label).collect();
    let cols: Vec<Vec<f64>> = (0..p)
        .map(|f| order.iter().map(|&i| table.rows[i].values[f]).collect())
        .collect();
    let sorted: Vec<Vec<u32>> = cols
        .iter()
        .map(|c| {
            let mut s: Vec<u32> = (0..n as u32).collect();
            s.sort_by(|&a, &b| c[a as usize].total_cmp(&c[b as usize]).then(a.cmp(&b)));
            s
        })
        .collect();

    // Absent classes get half a count so their log prior stays finite.
    let base_scores: Vec<f64> = counts
        .iter()
        .map(|&c| (c.max(1) as f64 * if c == 0 { 0.5 } else { 1.0 } / n as f64).ln())
        .collect();
    let mut scores: Vec<Vec<f64>> = vec![base_scores.clone(); n];
    let mut losses = vec![log_loss(&scores, &y)];
    let mut trees = Vec::with_capacity(params.n_estimators * classes);
    let grower = Grower {
        cols: &cols,
        sorted: &sorted,
        params,
    };
    for _ in 0..params.n_estimators {
        let probs: Vec<Vec<f64>> = scores.iter().map(|s| softmax(s)).collect();
        let mut deltas = Vec::with_capacity(classes);
        for c in 0..classes {
            let g: Vec<f64> = probs
                .iter()
                .zip(&y)
                .map(|(pr, &yi)| pr[c] - if yi == c { 1.0 } else { 0.0 })
                .collect();
            let h: Vec<f64> = probs
                .iter()
                .map(|pr| (2.0 * pr[c] * (1.0 - pr[c])).max(1e-16))
                .collect();
            let (tree, leaf_of) = grower.grow(&g, &h);
            deltas.push(leaf_of);
            trees.push(tree);
        }
        for (c, d) in deltas.iter().enumerate() {
            for (s, v) in scores.iter_mut().zip(d) {
                s[c] += v;
            }
        }
        losses.push(log_loss(&scores, &y));
    }
    Ok(GbtModel {
        classes,
        learning_rate: params.learning_rate,
        base_scores,
        trees,
        meta: GbtMeta {
            params: *params,
            feature_names: table.columns.clone(),
            training_ids: table.case_ids(),
            train_log_loss: losses,
        },
    })
}

struct Grower<'a> {
    cols: &'a [Vec<f64>],
    sorted: &'a [Vec<u32>],
    params: &'a GbtParams,
}

#[derive(Clone, Copy)]
struct Best {
    gain: f64,
    f: usize,
    thr: f64,
}

impl Grower<'_> {
    /// Grow one tree on gradients `g` and hessians `h`; also return the leaf
    /// value reached by every training row.
    fn grow(&self, g: &[f64], h: &[f64]) -> (Tree, Vec<f64>) {
        let n = g.len();
        let lambda = self.params.lambda;
        let score = |gs: f64, hs: f64| gs * gs / (hs + lambda);
        let mut nodes: Vec<Node> = vec![Node::Leaf { leaf: 0.0 }];
        let mut node_of = vec![0usize; n];
        let mut frontier = vec![0usize];
        let mut slot_of = vec![usize::MAX; 1];

        for _depth in 0..self.params.max_depth {
            if frontier.is_empty() {
                break;
            }
            slot_of.resize(nodes.len(), usize::MAX);
            for (s, &nd) in frontier.iter().enumerate() {
                slot_of[nd] = s;
            }
            let k = frontier.len();
            let (mut gt, mut ht, mut ct) = (vec![0.0; k], vec![0.0; k], vec![0usize; k]);
            for i in 0..n {
                let s = slot_of[node_of[i]];
                if s != usize::MAX {
                    gt[s] += g[i];
                    ht[s] += h[i];
                    ct[s] += 1;
                }
            }
            let parent: Vec<f64> = (0..k).map(|s| score(gt[s], ht[s])).collect();
            let mut best: Vec<Option<Best>> = vec![None; k];
            let (mut gl, mut hl, mut cl) = (vec![0.0; k], vec![0.0; k], vec![0usize; k]);
            let mut last = vec![f64::NAN; k];
            for (f, col) in self.cols.iter().enumerate() {
                gl.iter_mut().for_each(|v| *v = 0.0);
                hl.iter_mut().for_each(|v| *v = 0.0);
                cl.iter_mut().for_each(|v| *v = 0);
                for &i in &self.sorted[f] {
                    let i = i as usize;
                    let s = slot_of[node_of[i]];
                    if s == usize::MAX {
                        continue;
                    }
                    let x = col[i];
                    if cl[s] > 0 && x > last[s] {
                        let cr = ct[s] - cl[s];
                        if cl[s] >= self.params.min_leaf && cr >= self.params.min_leaf {
                            let gain = score(gl[s], hl[s]) + score(gt[s] - gl[s], ht[s] - hl[s]) - parent[s];
                            if gain > 0.0 && best[s].is_none_or(|b| gain > b.gain) {
                                best[s] = Some(Best { gain, f, thr: last[s] });
                            }
                        }
                    }
                    gl[s] += g[i];
                    hl[s] += h[i];
                    cl[s] += 1;
                    last[s] = x;
                }
            }
            let mut next = Vec::new();
            for (s, &nd) in frontier.iter().enumerate() {
                if let Some(b) = best[s] {
                    let l = nodes.len();
                    nodes.push(Node::Leaf { leaf: 0.0 });
                    nodes.push(Node::Leaf { leaf: 0.0 });
                    nodes[nd] = Node::Split {
                        split: SplitRule { f: b.f, thr: b.thr },
                        l,
                        r: l + 1,
                    };
                    next.push(l);
                    next.push(l + 1);
                }
            }
            for i in 0..n {
                if let Node::Split { split, l, r } = nodes[node_of[i]] {
                    node_of[i] = if self.cols[split.f][i] <= split.thr { l } else { r };
                }
            }
            for &nd in &frontier {
                slot_of[nd] = usize::MAX;
            }
            frontier = next;
        }

        let mut gs = vec![0.0; nodes.len()];
        let mut hs = vec![0.0; nodes.len()];
        for i in 0..n {
            gs[node_of[i]] += g[i];
            hs[node_of[i]] += h[i];
        }
        for (j, node) in nodes.iter_mut().enumerate() {
            if let Node::Leaf { leaf } = node {
                *leaf = -self.params.learning_rate * gs[j] / (hs[j] + lambda);
            }
        }
        let values = node_of
            .iter()
            .map(|&j| match nodes[j] {
                Node::Leaf { leaf } => leaf,
                Node::Split { .. } => unreachable!("rows always end in a leaf"),
            })
            .collect();
        (nodes, values)
    }
}

/// Fold assignment per case.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CvSplit {
    pub k: usize,
    pub fold_of: Vec<usize>,
}

impl CvSplit {
    pub fn train_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.fold_of.len()).filter(|&i| self.fold_of[i] != fold).collect()
    }

    pub fn val_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.fold_of.len()).filter(|&i| self.fold_of[i] == fold).collect()
    }
}

/// Stratified k-fold over arbitrary strata keys. Strata are visited in key
/// order, members shuffled with the seed, then dealt round-robin with a
/// cursor that carries over between strata.
pub fn stratified_kfold<K: Ord + Clone>(strata: &[K], k: usize, seed: u64) -> Result<CvSplit> {
    if k < 2 || k > strata.len() {
        return Err(Error::InvalidInput(format!("k = {k} folds for {} cases", strata.len())));
    }
    let mut groups: BTreeMap<K, Vec<usize>> = BTreeMap::new();
    for (i, s) in strata.iter().enumerate() {
        groups.entry(s.clone()).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fold_of = vec![0; strata.len()];
    let mut cursor = 0;
    for members in groups.values_mut() {
        members.shuffle(&mut rng);
        for &i in members.iter() {
            fold_of[i] = cursor % k;
            cursor += 1;
        }
    }
    Ok(CvSplit { k, fold_of })
}

/// Validation accuracy of one grid point, per fold and averaged.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub params: GbtParams,
    pub fold_accuracy: Vec<f64>,
    pub mean_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSearchResult {
    pub best_index: usize,
    pub best: GbtParams,
    pub points: Vec<GridPoint>,
}

fn argmax(p: &[f64]) -> usize {
    let mut b = 0;
    for (i, &v) in p.iter().enumerate() {
        if v > p[b] {
            b = i;
        }
    }
    b
}

/// Per-fold models for every grid point that shares everything but the
/// round count are one fit: a longer ensemble truncates to a shorter one.
fn fold_models(table: &FeatureTable, grid: &[GbtParams], split: &CvSplit) -> Result<Vec<(GbtParams, Vec<GbtModel>)>> {
    let mut families: Vec<GbtParams> = Vec::new();
    for g in grid {
        let same = |f: &GbtParams| GbtParams { n_estimators: 0, ..*f } == GbtParams { n_estimators: 0, ..*g };
        match families.iter_mut().find(|f| same(f)) {
            Some(f) => f.n_estimators = f.n_estimators.max(g.n_estimators),
            None => families.push(*g),
        }
    }
    let jobs: Vec<(usize, usize)> = (0..families.len())
        .flat_map(|f| (0..split.k).map(move |k| (f, k)))
        .collect();
    let fitted = par::try_map(&jobs, |&(f, k)| {
        gbt_fit(&table.subset(&split.train_indices(k)), &families[f])
    })?;
    let mut out: Vec<(GbtParams, Vec<GbtModel>)> = families.iter().map(|f| (*f, Vec::new())).collect();
    for (&(f, _), m) in jobs.iter().zip(fitted) {
        out[f].1.push(m);
    }
    Ok(out)
}

/// Evaluate every grid point by mean k-fold validation accuracy. Ties go to
/// the earliest point in grid order.
pub fn grid_search(table: &FeatureTable, grid: &[GbtParams], k: usize, seed: u64) -> Result<GridSearchResult> {
    if grid.is_empty() {
        return Err(Error::InvalidInput("empty parameter grid".into()));
    }
    for g in grid {
        g.validate()?;
    }
    let strata: Vec<(usize, String)> = table.rows.iter().map(|r| (r.label, r.center.clone())).collect();
    let split = stratified_kfold(&strata, k, seed)?;
    let families = fold_models(table, grid, &split)?;
    let mut points = Vec::with_capacity(grid.len());
    for g in grid {
        let models = &families
            .iter()
            .find(|(f, _)| GbtParams { n_estimators: 0, ..*f } == GbtParams { n_estimators: 0, ..*g })
            .expect("every grid point has a family")
            .1;
        let mut fold_accuracy = Vec::with_capacity(k);
        for (fold, m) in models.iter().enumerate() {
            let val = split.val_indices(fold);
            let mut correct = 0;
            for &i in &val {
                let row = &table.rows[i];
                if argmax(&m.predict_proba_at(&row.values, g.n_estimators)?) == row.label {
                    correct += 1;
                }
            }
            fold_accuracy.push(correct as f64 / val.len().max(1) as f64);
        }
        let mean_accuracy = fold_accuracy.iter().sum::<f64>() / k as f64;
        points.push(GridPoint {
            params: *g,
            fold_accuracy,
            mean_accuracy,
        });
    }
    let mut best_index = 0;
    for (i, pt) in points.iter().enumerate() {
        if pt.mean_accuracy > points[best_index].mean_accuracy {
            best_index = i;
        }
    }
    Ok(GridSearchResult {
        best_index,
        best: grid[best_index],
        points,
    })
}

/// Out-of-fold class probabilities for every row of `table`.
pub fn cross_val_predict(table: &FeatureTable, params: &GbtParams, split: &CvSplit) -> Result<Vec<Vec<f64>>> {
    let folds: Vec<usize> = (0..split.k).collect();
    let models = par::try_map(&folds, |&k| gbt_fit(&table.subset(&split.train_indices(k)), params))?;
    let mut out = vec![Vec::new(); table.len()];
    for (k, m) in models.iter().enumerate() {
        for i in split.val_indices(k) {
            out[i] = m.predict_proba(&table.rows[i].values)?;
        }
    }
    Ok(out)
}
