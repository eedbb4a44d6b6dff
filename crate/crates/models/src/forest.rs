//! CART random forests for regression and classification, and quantile
//! regression forests that keep the training samples of every leaf.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linear::{per_location_fit, PerLocation};

/// Slack on the cumulative weight when locating a weighted quantile, so that
/// sums that equal `alpha` exactly in rationals are not missed by rounding.
const QUANTILE_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MaxFeatures {
    All,
    /// `⌊√p⌋`, at least 1.
    Sqrt,
    /// `⌈fraction · p⌉`, at least 1.
    Fraction(f64),
    Count(usize),
}

impl MaxFeatures {
    fn resolve(&self, p: usize) -> usize {
        let m = match *self {
            MaxFeatures::All => p,
            MaxFeatures::Sqrt => (p as f64).sqrt().floor() as usize,
            MaxFeatures::Fraction(f) => (f * p as f64).ceil() as usize,
            MaxFeatures::Count(c) => c,
        };
        m.clamp(1, p.max(1))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForestParams {
    pub n_trees: usize,
    /// `None` picks all features for regression and `√p` for classification.
    pub max_features: Option<MaxFeatures>,
    pub min_samples_split: usize,
    pub min_samples_leaf: usize,
    pub max_depth: Option<usize>,
    pub bootstrap: bool,
    pub seed: u64,
}

impl Default for ForestParams {
    fn default() -> Self {
        Self {
            n_trees: 100,
            max_features: None,
            min_samples_split: 2,
            min_samples_leaf: 1,
            max_depth: None,
            bootstrap: true,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub enum ForestTarget<'a> {
    Regression(&'a [f64]),
    /// Class ids in `0..n_classes`.
    Classification { labels: &'a [usize], n_classes: usize },
}

impl ForestTarget<'_> {
    fn len(&self) -> usize {
        match self {
            ForestTarget::Regression(y) => y.len(),
            ForestTarget::Classification { labels, .. } => labels.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ForestKind {
    Regression,
    Classification { n_classes: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Node {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        /// Mean target (regression) or class frequencies (classification).
        value: Vec<f64>,
        /// Training sample ids in this leaf, with bootstrap multiplicity.
        /// Kept only for quantile forests.
        samples: Vec<u32>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "TreeArrays", try_from = "TreeArrays")]
pub struct Tree {
    pub nodes: Vec<Node>,
}

/// Serialized tree: one entry per node in parallel arrays. Leaves have
/// feature `-1`; their values and samples are stored contiguously with
/// per-leaf lengths.
#[derive(Serialize, Deserialize)]
struct TreeArrays {
    feature: Vec<i64>,
    threshold: Vec<f64>,
    left: Vec<usize>,
    right: Vec<usize>,
    value_len: Vec<usize>,
    values: Vec<f64>,
    sample_len: Vec<usize>,
    samples: Vec<u32>,
}

impl From<Tree> for TreeArrays {
    fn from(tree: Tree) -> Self {
        let mut a = TreeArrays {
            feature: Vec::with_capacity(tree.nodes.len()),
            threshold: Vec::new(),
            left: Vec::new(),
            right: Vec::new(),
            value_len: Vec::new(),
            values: Vec::new(),
            sample_len: Vec::new(),
            samples: Vec::new(),
        };
        for node in tree.nodes {
            match node {
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    a.feature.push(feature as i64);
                    a.threshold.push(threshold);
                    a.left.push(left);
                    a.right.push(right);
                }
                Node::Leaf { value, samples } => {
                    a.feature.push(-1);
                    a.value_len.push(value.len());
                    a.values.extend(value);
                    a.sample_len.push(samples.len());
                    a.samples.extend(samples);
                }
            }
        }
        a
    }
}

impl TryFrom<TreeArrays> for Tree {
    type Error = String;

    fn try_from(a: TreeArrays) -> std::result::Result<Self, String> {
        let n_splits = a.feature.iter().filter(|&&f| f >= 0).count();
        let n_leaves = a.feature.len() - n_splits;
        if a.threshold.len() != n_splits || a.left.len() != n_splits || a.right.len() != n_splits || a.value_len.len() != n_leaves || a.sample_len.len() != n_leaves {
            return Err("inconsistent tree arrays".into());
        }
        let (mut split, mut leaf, mut v, mut s) = (0, 0, 0, 0);
        let mut nodes = Vec::with_capacity(a.feature.len());
        for &f in &a.feature {
            if f >= 0 {
                let (left, right) = (a.left[split], a.right[split]);
                if left >= a.feature.len() || right >= a.feature.len() {
                    return Err(format!("child index out of range at split {split}"));
                }
                nodes.push(Node::Split {
                    feature: f as usize,
                    threshold: a.threshold[split],
                    left,
                    right,
                });
                split += 1;
            } else {
                let (vl, sl) = (a.value_len[leaf], a.sample_len[leaf]);
                let value = a.values.get(v..v + vl).ok_or("leaf values truncated")?.to_vec();
                let samples = a.samples.get(s..s + sl).ok_or("leaf samples truncated")?.to_vec();
                nodes.push(Node::Leaf { value, samples });
                v += vl;
                s += sl;
                leaf += 1;
            }
        }
        if nodes.is_empty() {
            return Err("empty tree".into());
        }
        Ok(Tree { nodes })
    }
}

impl Tree {
    /// Index of the leaf reached by `row`.
    pub fn leaf_index(&self, row: &[f64]) -> usize {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if row[*feature] <= *threshold { *left } else { *right },
                Node::Leaf { .. } => return i,
            }
        }
    }

    pub fn leaf(&self, row: &[f64]) -> (&[f64], &[u32]) {
        match &self.nodes[self.leaf_index(row)] {
            Node::Leaf { value, samples } => (value, samples),
            Node::Split { .. } => unreachable!(),
        }
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Leaf { .. })).count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    pub kind: ForestKind,
    pub params: ForestParams,
    pub n_features: usize,
    pub trees: Vec<Tree>,
    /// Training targets, kept by quantile forests.
    pub targets: Option<Vec<f64>>,
}

/// Fit a random forest on a row-major `x` with `n_cols` columns.
pub fn rf_fit(x: &[f64], n_cols: usize, target: ForestTarget, params: &ForestParams) -> Result<Forest> {
    fit_forest(x, n_cols, target, params, false).map(|(f, _)| f)
}

/// Quantile regression forest: a regression forest whose leaves keep their
/// training samples.
pub fn qrf_fit(x: &[f64], n_cols: usize, y: &[f64], params: &ForestParams) -> Result<Forest> {
    fit_forest(x, n_cols, ForestTarget::Regression(y), params, true).map(|(f, _)| f)
}

/// One quantile forest per location, fitted in parallel. `matrices` holds a
/// row-major design and its targets per location.
pub fn per_location_qrf_fit(matrices: &[(Vec<f64>, Vec<f64>)], n_cols: usize, params: &ForestParams) -> Result<PerLocation<Forest>> {
    per_location_fit(
        matrices,
        |(x, y)| qrf_fit(x, n_cols, y, params),
        |(x, y)| qrf_fit(x, n_cols, y, &ForestParams { n_trees: 1, bootstrap: false, ..*params }),
    )
}

/// Regression forest plus out-of-bag predictions (`None` for rows in every
/// bootstrap sample).
pub fn rf_fit_oob(x: &[f64], n_cols: usize, y: &[f64], params: &ForestParams) -> Result<(Forest, Vec<Option<f64>>)> {
    let (forest, in_bag) = fit_forest(x, n_cols, ForestTarget::Regression(y), params, false)?;
    let n = y.len();
    let mut sums = vec![0.0; n];
    let mut counts = vec![0usize; n];
    for (tree, bag) in forest.trees.iter().zip(&in_bag) {
        for i in 0..n {
            if !bag[i] {
                sums[i] += tree.leaf(&x[i * n_cols..(i + 1) * n_cols]).0[0];
                counts[i] += 1;
            }
        }
    }
    let oob = sums.iter().zip(&counts).map(|(s, &c)| (c > 0).then(|| s / c as f64)).collect();
    Ok((forest, oob))
}

fn fit_forest(x: &[f64], n_cols: usize, target: ForestTarget, params: &ForestParams, keep_samples: bool) -> Result<(Forest, Vec<Vec<bool>>)> {
    let n = target.len();
    if n_cols == 0 || x.len() != n * n_cols {
        return Err(Error::shape("forest", format!("{} values for {n} rows of {n_cols} columns", x.len())));
    }
    if n < 2 {
        return Err(Error::Config("a forest needs at least two training rows".into()));
    }
    if params.n_trees == 0 {
        return Err(Error::Config("n_trees must be at least 1".into()));
    }
    if params.min_samples_leaf == 0 || params.min_samples_split < 2 {
        return Err(Error::Config("min_samples_leaf >= 1 and min_samples_split >= 2 required".into()));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteInput("forest features"));
    }
    let kind = match target {
        ForestTarget::Regression(y) => {
            if y.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteInput("forest targets"));
            }
            ForestKind::Regression
        }
        ForestTarget::Classification { labels, n_classes } => {
            if let Some(bad) = labels.iter().find(|&&c| c >= n_classes) {
                return Err(Error::Config(format!("class id {bad} outside 0..{n_classes}")));
            }
            ForestKind::Classification { n_classes }
        }
    };
    let max_features = params.max_features.unwrap_or(match kind {
        ForestKind::Regression => MaxFeatures::All,
        ForestKind::Classification { .. } => MaxFeatures::Sqrt,
    });
    let mtry = max_features.resolve(n_cols);
    let grown: Vec<(Tree, Vec<bool>)> = (0..params.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(params.seed.wrapping_add(t as u64));
            let idx: Vec<u32> = if params.bootstrap {
                (0..n).map(|_| rng.gen_range(0..n) as u32).collect()
            } else {
                (0..n as u32).collect()
            };
            let mut in_bag = vec![false; n];
            idx.iter().for_each(|&i| in_bag[i as usize] = true);
            let grower = Grower {
                x,
                n_cols,
                target,
                params,
                mtry,
                keep_samples,
            };
            (grower.grow(idx, &mut rng), in_bag)
        })
        .collect();
    let (trees, bags) = grown.into_iter().unzip();
    let targets = match (keep_samples, target) {
        (true, ForestTarget::Regression(y)) => Some(y.to_vec()),
        _ => None,
    };
    Ok((
        Forest {
            kind,
            params: *params,
            n_features: n_cols,
            trees,
            targets,
        },
        bags,
    ))
}

struct Grower<'a> {
    x: &'a [f64],
    n_cols: usize,
    target: ForestTarget<'a>,
    params: &'a ForestParams,
    mtry: usize,
    keep_samples: bool,
}

struct SplitChoice {
    feature: usize,
    threshold: f64,
    gain: f64,
}

/// Per-tree working set. Slots index the bootstrap sample; every feature
/// keeps its slots sorted by value, and a node owns the same `start..end`
/// segment in every feature's list.
struct Workspace {
    ids: Vec<u32>,
    /// Column-major feature values per slot.
    cols: Vec<Vec<f64>>,
    /// Regression targets or class ids per slot.
    ys: Vec<f64>,
    classes: Vec<usize>,
    order: Vec<Vec<u32>>,
    goes_left: Vec<bool>,
    scratch: Vec<u32>,
}

impl Grower<'_> {
    fn workspace(&self, ids: Vec<u32>) -> Workspace {
        let n = ids.len();
        let cols: Vec<Vec<f64>> = (0..self.n_cols).map(|f| ids.iter().map(|&i| self.x[i as usize * self.n_cols + f]).collect()).collect();
        let (ys, classes) = match self.target {
            ForestTarget::Regression(y) => (ids.iter().map(|&i| y[i as usize]).collect(), Vec::new()),
            ForestTarget::Classification { labels, .. } => (Vec::new(), ids.iter().map(|&i| labels[i as usize]).collect()),
        };
        let order = cols
            .iter()
            .map(|c| {
                let mut o: Vec<u32> = (0..n as u32).collect();
                o.sort_unstable_by(|&a, &b| c[a as usize].total_cmp(&c[b as usize]).then(a.cmp(&b)));
                o
            })
            .collect();
        Workspace {
            ids,
            cols,
            ys,
            classes,
            order,
            goes_left: vec![false; n],
            scratch: Vec::with_capacity(n),
        }
    }

    fn grow(&self, ids: Vec<u32>, rng: &mut ChaCha8Rng) -> Tree {
        let n = ids.len();
        let mut ws = self.workspace(ids);
        let mut nodes = vec![Node::Leaf {
            value: Vec::new(),
            samples: Vec::new(),
        }];
        // (node slot, start, end, depth)
        let mut stack = vec![(0usize, 0usize, n, 0usize)];
        let mut features: Vec<usize> = (0..self.n_cols).collect();
        while let Some((slot, start, end, depth)) = stack.pop() {
            let split = if self.can_split(&ws, start, end, depth) {
                self.best_split(&ws, start, end, &mut features, rng)
            } else {
                None
            };
            match split {
                Some(s) => {
                    let mid = partition(&mut ws, start, end, &s);
                    let left = nodes.len();
                    for _ in 0..2 {
                        nodes.push(Node::Leaf {
                            value: Vec::new(),
                            samples: Vec::new(),
                        });
                    }
                    nodes[slot] = Node::Split {
                        feature: s.feature,
                        threshold: s.threshold,
                        left,
                        right: left + 1,
                    };
                    // Right first so the left subtree is numbered first.
                    stack.push((left + 1, mid, end, depth + 1));
                    stack.push((left, start, mid, depth + 1));
                }
                None => nodes[slot] = self.leaf(&ws, start, end),
            }
        }
        Tree { nodes }
    }

    fn can_split(&self, ws: &Workspace, start: usize, end: usize, depth: usize) -> bool {
        let len = end - start;
        if len < self.params.min_samples_split || len < 2 * self.params.min_samples_leaf {
            return false;
        }
        if self.params.max_depth.is_some_and(|d| depth >= d) {
            return false;
        }
        // Pure nodes stay leaves.
        let seg = &ws.order[0][start..end];
        match self.target {
            ForestTarget::Regression(_) => seg.iter().any(|&s| ws.ys[s as usize] != ws.ys[seg[0] as usize]),
            ForestTarget::Classification { .. } => seg.iter().any(|&s| ws.classes[s as usize] != ws.classes[seg[0] as usize]),
        }
    }

    fn leaf(&self, ws: &Workspace, start: usize, end: usize) -> Node {
        let seg = &ws.order[0][start..end];
        let value = match self.target {
            ForestTarget::Regression(_) => vec![seg.iter().map(|&s| ws.ys[s as usize]).sum::<f64>() / seg.len() as f64],
            ForestTarget::Classification { n_classes, .. } => {
                let mut v = vec![0.0; n_classes];
                seg.iter().for_each(|&s| v[ws.classes[s as usize]] += 1.0);
                v.iter_mut().for_each(|c| *c /= seg.len() as f64);
                v
            }
        };
        let mut samples: Vec<u32> = if self.keep_samples { seg.iter().map(|&s| ws.ids[s as usize]).collect() } else { Vec::new() };
        samples.sort_unstable();
        Node::Leaf { value, samples }
    }

    /// Scan features in random order until `mtry` non-constant ones have been
    /// evaluated. Among equal gains the lower feature index, then the lower
    /// threshold, wins.
    fn best_split(&self, ws: &Workspace, start: usize, end: usize, features: &mut [usize], rng: &mut ChaCha8Rng) -> Option<SplitChoice> {
        features.shuffle(rng);
        let mut best: Option<SplitChoice> = None;
        let mut evaluated = 0;
        for &f in features.iter() {
            if evaluated >= self.mtry {
                break;
            }
            let seg = &ws.order[f][start..end];
            let col = &ws.cols[f];
            if col[seg[0] as usize] == col[seg[seg.len() - 1] as usize] {
                continue;
            }
            evaluated += 1;
            if let Some((threshold, gain)) = self.scan(ws, col, seg) {
                let better = match &best {
                    None => true,
                    Some(b) => gain > b.gain || (gain == b.gain && (f < b.feature || (f == b.feature && threshold < b.threshold))),
                };
                if better {
                    best = Some(SplitChoice { feature: f, threshold, gain });
                }
            }
        }
        best
    }

    /// Best threshold on one sorted feature segment and its impurity gain.
    fn scan(&self, ws: &Workspace, col: &[f64], seg: &[u32]) -> Option<(f64, f64)> {
        let n = seg.len();
        let leaf_min = self.params.min_samples_leaf;
        let value = |i: usize| col[seg[i] as usize];
        let mut best: Option<(f64, f64)> = None;
        match self.target {
            ForestTarget::Regression(_) => {
                let total: f64 = seg.iter().map(|&s| ws.ys[s as usize]).sum();
                let base = total * total / n as f64;
                let mut left = 0.0;
                for i in 0..n - 1 {
                    left += ws.ys[seg[i] as usize];
                    let n_left = i + 1;
                    if n_left < leaf_min || n - n_left < leaf_min || value(i) == value(i + 1) {
                        continue;
                    }
                    let right = total - left;
                    let gain = left * left / n_left as f64 + right * right / (n - n_left) as f64 - base;
                    if best.map_or(true, |b| gain > b.1) {
                        best = Some((midpoint(value(i), value(i + 1)), gain));
                    }
                }
            }
            ForestTarget::Classification { n_classes, .. } => {
                let mut total = vec![0.0; n_classes];
                seg.iter().for_each(|&s| total[ws.classes[s as usize]] += 1.0);
                let base = total.iter().map(|c| c * c).sum::<f64>() / n as f64;
                let mut left = vec![0.0; n_classes];
                for i in 0..n - 1 {
                    left[ws.classes[seg[i] as usize]] += 1.0;
                    let n_left = i + 1;
                    if n_left < leaf_min || n - n_left < leaf_min || value(i) == value(i + 1) {
                        continue;
                    }
                    let (mut sl, mut sr) = (0.0, 0.0);
                    for k in 0..n_classes {
                        sl += left[k] * left[k];
                        sr += (total[k] - left[k]).powi(2);
                    }
                    let gain = sl / n_left as f64 + sr / (n - n_left) as f64 - base;
                    if best.map_or(true, |b| gain > b.1) {
                        best = Some((midpoint(value(i), value(i + 1)), gain));
                    }
                }
            }
        }
        best.filter(|b| b.1 > 0.0)
    }
}

/// Midpoint of two consecutive distinct values, kept strictly below `b` so
/// that `a` goes left and `b` goes right.
fn midpoint(a: f64, b: f64) -> f64 {
    let m = a + (b - a) / 2.0;
    if m < b {
        m
    } else {
        a
    }
}

/// Stable partition of every feature's segment by the chosen split; returns
/// the boundary.
fn partition(ws: &mut Workspace, start: usize, end: usize, split: &SplitChoice) -> usize {
    let col = &ws.cols[split.feature];
    for &s in &ws.order[split.feature][start..end] {
        ws.goes_left[s as usize] = col[s as usize] <= split.threshold;
    }
    let mut mid = start;
    for order in ws.order.iter_mut() {
        let seg = &mut order[start..end];
        ws.scratch.clear();
        let mut k = 0;
        for i in 0..seg.len() {
            let s = seg[i];
            if ws.goes_left[s as usize] {
                seg[k] = s;
                k += 1;
            } else {
                ws.scratch.push(s);
            }
        }
        seg[k..].copy_from_slice(&ws.scratch);
        mid = start + k;
    }
    mid
}

impl Forest {
    fn check(&self, row: &[f64]) -> Result<()> {
        if row.len() != self.n_features {
            return Err(Error::FeatureCount {
                found: row.len(),
                expected: self.n_features,
            });
        }
        Ok(())
    }

    /// Mean of the tree predictions (regression).
    pub fn predict(&self, row: &[f64]) -> Result<f64> {
        self.check(row)?;
        Ok(self.trees.iter().map(|t| t.leaf(row).0[0]).sum::<f64>() / self.trees.len() as f64)
    }

    /// Mean of the per-tree leaf class frequencies.
    pub fn predict_proba(&self, row: &[f64]) -> Result<Vec<f64>> {
        self.check(row)?;
        let ForestKind::Classification { n_classes } = self.kind else {
            return Err(Error::Config("class probabilities need a classification forest".into()));
        };
        let mut p = vec![0.0; n_classes];
        for t in &self.trees {
            for (a, v) in p.iter_mut().zip(t.leaf(row).0) {
                *a += v;
            }
        }
        p.iter_mut().for_each(|v| *v /= self.trees.len() as f64);
        Ok(p)
    }

    /// Most probable class; ties go to the smaller class id.
    pub fn predict_class(&self, row: &[f64]) -> Result<usize> {
        let p = self.predict_proba(row)?;
        Ok((0..p.len()).fold(0, |best, k| if p[k] > p[best] { k } else { best }))
    }

    /// Quantile-forest weights of the training samples for `row`, by sample id.
    pub fn qrf_weights(&self, row: &[f64]) -> Result<Vec<(usize, f64)>> {
        self.check(row)?;
        if self.targets.is_none() {
            return Err(Error::Config("forest was not fitted as a quantile forest".into()));
        }
        let per_tree = 1.0 / self.trees.len() as f64;
        let mut entries: Vec<(usize, f64)> = Vec::new();
        for t in &self.trees {
            let samples = t.leaf(row).1;
            let w = per_tree / samples.len() as f64;
            entries.extend(samples.iter().map(|&i| (i as usize, w)));
        }
        entries.sort_by_key(|e| e.0);
        let mut merged: Vec<(usize, f64)> = Vec::with_capacity(entries.len());
        for (i, w) in entries {
            match merged.last_mut() {
                Some(last) if last.0 == i => last.1 += w,
                _ => merged.push((i, w)),
            }
        }
        Ok(merged)
    }

    /// Weighted `alpha`-quantile of the training targets: the smallest target
    /// whose cumulative weight, in ascending target order, reaches `alpha`.
    pub fn qrf_predict(&self, row: &[f64], alpha: f64) -> Result<f64> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::Config(format!("quantile level {alpha} outside (0, 1)")));
        }
        let y = self.targets.as_ref().ok_or_else(|| Error::Config("forest was not fitted as a quantile forest".into()))?;
        let mut weights = self.qrf_weights(row)?;
        weights.sort_by(|a, b| y[a.0].total_cmp(&y[b.0]).then(a.0.cmp(&b.0)));
        let mut cum = 0.0;
        for &(i, w) in &weights {
            cum += w;
            if cum >= alpha - QUANTILE_SLACK {
                return Ok(y[i]);
            }
        }
        Ok(y[weights.last().expect("nonempty leaves").0])
    }
}
