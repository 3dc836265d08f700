//! Least-squares gradient boosting over depth-limited regression trees.
//!
//! Trees are grown level by level on histograms. Each feature is cut once into
//! at most [`MAX_BINS`] quantile bins (one bin per distinct value when there
//! are few), so split search at a level costs `O(n · d + nodes · bins)`.
//! Thresholds sit midway between neighbouring bins' extreme values.

use serde::{Deserialize, Serialize};

use crate::data::Matrix;
use crate::error::{Error, Result};

pub const MAX_DEPTH: usize = 8;
pub const MAX_BINS: usize = 128;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoostParams {
    pub rounds: usize,
    pub depth: usize,
    pub learning_rate: f64,
    /// Minimum number of training rows in each child of a split.
    pub min_leaf: usize,
}

impl BoostParams {
    pub fn validate(&self) -> Result<()> {
        if self.rounds == 0 {
            return Err(Error::InvalidConfig("boosting needs at least one round".into()));
        }
        if !(1..=MAX_DEPTH).contains(&self.depth) {
            return Err(Error::InvalidConfig(format!("tree depth must lie in [1, {MAX_DEPTH}], got {}", self.depth)));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return Err(Error::InvalidConfig(format!("learning rate must lie in (0, 1], got {}", self.learning_rate)));
        }
        if self.min_leaf == 0 {
            return Err(Error::InvalidConfig("min_leaf must be at least 1".into()));
        }
        Ok(())
    }
}

/// Internal nodes have `left != 0`; the root is never a child.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Node {
    feature: u32,
    threshold: f64,
    left: u32,
    right: u32,
    value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut v = 0usize;
        loop {
            let node = &self.nodes[v];
            if node.left == 0 {
                return node.value;
            }
            v = if x[node.feature as usize] < node.threshold { node.left as usize } else { node.right as usize };
        }
    }

    pub fn leaf_count(&self) -> usize {
        self.nodes.iter().filter(|n| n.left == 0).count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoostedTrees {
    base: f64,
    learning_rate: f64,
    trees: Vec<Tree>,
    /// Weighted training SSE after each round (index 0 is the base score).
    train_sse: Vec<f64>,
}

#[derive(Clone, Copy, Default)]
struct Stats {
    w: f64,
    wr: f64,
    wrr: f64,
    count: usize,
}

impl Stats {
    fn add(&mut self, w: f64, r: f64) {
        self.w += w;
        self.wr += w * r;
        self.wrr += w * r * r;
        self.count += 1;
    }

    fn score(&self) -> f64 {
        if self.w > 0.0 {
            self.wr * self.wr / self.w
        } else {
            0.0
        }
    }
}

#[derive(Clone, Copy)]
struct Candidate {
    gain: f64,
    feature: usize,
    bin: u16,
    threshold: f64,
}

#[derive(Clone, Copy, Default)]
struct Acc {
    w: f64,
    wr: f64,
    count: usize,
}

/// Quantile-binned copy of the training covariates.
struct Binned {
    /// Row-major bin codes.
    codes: Vec<u16>,
    /// Feature `f` owns histogram slots `offsets[f]..offsets[f + 1]`.
    offsets: Vec<usize>,
    /// Split threshold between slot `k` and `k + 1` of the same feature.
    thresholds: Vec<f64>,
}

fn bin_features(x: &Matrix) -> Binned {
    let (n, d) = (x.nrows(), x.ncols());
    let mut codes = vec![0u16; n * d];
    let mut offsets = vec![0usize];
    let mut thresholds = Vec::new();
    for f in 0..d {
        let mut idx: Vec<usize> = (0..n).collect();
        idx.sort_by(|&a, &b| x.get(a, f).total_cmp(&x.get(b, f)));
        let distinct = 1 + idx.windows(2).filter(|p| x.get(p[0], f) != x.get(p[1], f)).count();
        let mut bin = 0usize;
        let mut lo_hi: Vec<(f64, f64)> = vec![(x.get(idx[0], f), x.get(idx[0], f))];
        for (rank, &i) in idx.iter().enumerate() {
            let v = x.get(i, f);
            if rank > 0 && v != x.get(idx[rank - 1], f) {
                // a new distinct value may open the next bin
                let advance = distinct <= MAX_BINS || (rank * MAX_BINS >= (bin + 1) * n && bin + 1 < MAX_BINS);
                if advance {
                    bin += 1;
                    lo_hi.push((v, v));
                }
            }
            lo_hi[bin].1 = v;
            codes[i * d + f] = bin as u16;
        }
        for k in 0..lo_hi.len() {
            thresholds.push(if k + 1 < lo_hi.len() { 0.5 * (lo_hi[k].1 + lo_hi[k + 1].0) } else { f64::INFINITY });
        }
        offsets.push(thresholds.len());
    }
    Binned { codes, offsets, thresholds }
}

fn grow_tree(x: &Matrix, binned: &Binned, resid: &[f64], w: &[f64], depth: usize, min_leaf: usize, leaf_of: &mut [u32]) -> Tree {
    let (n, d) = (x.nrows(), x.ncols());
    let width = *binned.offsets.last().unwrap_or(&0);
    let mut root = Stats::default();
    for i in 0..n {
        root.add(w[i], resid[i]);
    }
    let mut nodes = vec![Node { feature: 0, threshold: 0.0, left: 0, right: 0, value: 0.0 }];
    let mut stats = vec![root];
    leaf_of.iter_mut().for_each(|v| *v = 0);
    let mut open: Vec<u32> = vec![0];
    const NONE: u32 = u32::MAX;
    let mut row_slot = vec![0u32; n];
    let mut hist: Vec<Acc> = Vec::new();

    for _level in 0..depth {
        if open.is_empty() {
            break;
        }
        let mut slot_of = vec![NONE; nodes.len()];
        for (s, &v) in open.iter().enumerate() {
            slot_of[v as usize] = s as u32;
        }
        for (rs, &leaf) in row_slot.iter_mut().zip(leaf_of.iter()) {
            *rs = slot_of[leaf as usize];
        }
        hist.clear();
        hist.resize(open.len() * width, Acc::default());
        for (i, (&s, codes)) in row_slot.iter().zip(binned.codes.chunks_exact(d)).enumerate() {
            if s == NONE {
                continue;
            }
            let h = &mut hist[s as usize * width..(s as usize + 1) * width];
            let (wi, wri) = (w[i], w[i] * resid[i]);
            for (&off, &c) in binned.offsets.iter().zip(codes) {
                let a = &mut h[off + c as usize];
                a.w += wi;
                a.wr += wri;
                a.count += 1;
            }
        }

        let mut next_open = Vec::new();
        let mut split_to: Vec<Option<(usize, u16, u32, u32)>> = vec![None; open.len()];
        for (s, &v) in open.iter().enumerate() {
            let total = stats[v as usize];
            let base = total.score();
            let h = &hist[s * width..(s + 1) * width];
            let mut best: Option<Candidate> = None;
            for f in 0..d {
                let (lo, hi) = (binned.offsets[f], binned.offsets[f + 1]);
                let mut left = Acc::default();
                for k in lo..hi.saturating_sub(1) {
                    if h[k].count == 0 {
                        continue;
                    }
                    left.w += h[k].w;
                    left.wr += h[k].wr;
                    left.count += h[k].count;
                    let right_count = total.count - left.count;
                    if right_count < min_leaf {
                        break;
                    }
                    let (rw, rwr) = (total.w - left.w, total.wr - left.wr);
                    if left.count >= min_leaf && left.w > 0.0 && rw > 0.0 {
                        let gain = left.wr * left.wr / left.w + rwr * rwr / rw - base;
                        if best.is_none_or(|b| gain > b.gain) {
                            best = Some(Candidate { gain, feature: f, bin: (k - lo) as u16, threshold: binned.thresholds[k] });
                        }
                    }
                }
            }
            let node_sse = (total.wrr - base).max(0.0);
            match best {
                Some(c) if c.gain > 1e-12 * node_sse && c.gain > 0.0 => {
                    let l = nodes.len() as u32;
                    nodes.push(Node { feature: 0, threshold: 0.0, left: 0, right: 0, value: 0.0 });
                    nodes.push(Node { feature: 0, threshold: 0.0, left: 0, right: 0, value: 0.0 });
                    stats.push(Stats::default());
                    stats.push(Stats::default());
                    let node = &mut nodes[v as usize];
                    node.feature = c.feature as u32;
                    node.threshold = c.threshold;
                    node.left = l;
                    node.right = l + 1;
                    split_to[s] = Some((c.feature, c.bin, l, l + 1));
                    next_open.push(l);
                    next_open.push(l + 1);
                }
                _ => {}
            }
        }
        for i in 0..n {
            let s = row_slot[i];
            if s == NONE {
                continue;
            }
            if let Some((f, b, l, r)) = split_to[s as usize] {
                let child = if binned.codes[i * d + f] <= b { l } else { r };
                leaf_of[i] = child;
                stats[child as usize].add(w[i], resid[i]);
            }
        }
        open = next_open;
    }

    for (node, st) in nodes.iter_mut().zip(&stats) {
        if node.left == 0 {
            node.value = if st.w > 0.0 { st.wr / st.w } else { 0.0 };
        }
    }
    Tree { nodes }
}

impl BoostedTrees {
    pub fn fit(x: &Matrix, y: &[f64], weights: &[f64], params: BoostParams) -> Result<Self> {
        params.validate()?;
        let n = x.nrows();
        if n == 0 {
            return Err(Error::EmptyData);
        }
        let sw: f64 = weights.iter().sum();
        if !(sw > 0.0) {
            return Err(Error::AllZeroWeights);
        }
        let base = weights.iter().zip(y).map(|(w, v)| w * v).sum::<f64>() / sw;
        let mut fitted = vec![base; n];
        let sse = |fitted: &[f64]| -> f64 { (0..n).map(|i| weights[i] * (y[i] - fitted[i]).powi(2)).sum() };
        let mut train_sse = vec![sse(&fitted)];
        let binned = bin_features(x);
        let mut leaf_of = vec![0u32; n];
        let mut trees = Vec::with_capacity(params.rounds);
        let mut resid = vec![0.0; n];
        for _ in 0..params.rounds {
            for i in 0..n {
                resid[i] = y[i] - fitted[i];
            }
            let tree = grow_tree(x, &binned, &resid, weights, params.depth, params.min_leaf, &mut leaf_of);
            for i in 0..n {
                fitted[i] += params.learning_rate * tree.nodes[leaf_of[i] as usize].value;
            }
            train_sse.push(sse(&fitted));
            let degenerate = tree.nodes.len() == 1;
            trees.push(tree);
            if degenerate {
                // residual has no usable split; further rounds only shrink the
                // root mean, which is already ~0
                break;
            }
        }
        Ok(BoostedTrees { base, learning_rate: params.learning_rate, trees, train_sse })
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        self.base + self.learning_rate * self.trees.iter().map(|t| t.predict(x)).sum::<f64>()
    }

    pub fn trees(&self) -> &[Tree] {
        &self.trees
    }

    pub fn train_sse(&self) -> &[f64] {
        &self.train_sse
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(rounds: usize, depth: usize, lr: f64) -> BoostParams {
        BoostParams { rounds, depth, learning_rate: lr, min_leaf: 1 }
    }

    #[test]
    fn constant_target_is_weighted_mean() {
        let x = Matrix::new(4, 2, vec![0.0, 1.0, 1.0, 0.0, 2.0, 2.0, 3.0, -1.0]).unwrap();
        let m = BoostedTrees::fit(&x, &[3.0; 4], &[1.0, 2.0, 1.0, 1.0], params(10, 3, 0.3)).unwrap();
        assert!(m.trees().iter().all(|t| t.leaf_count() == 1));
        for r in x.rows() {
            assert!((m.predict(r) - 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn single_stump_recovers_step() {
        let xs: Vec<f64> = (0..20).map(|i| if i % 3 == 0 { 1.0 } else { -1.0 }).collect();
        let y: Vec<f64> = xs.iter().map(|&v| if v > 0.0 { 1.0 } else { 0.0 }).collect();
        let x = Matrix::column(xs.clone());
        let m = BoostedTrees::fit(&x, &y, &[1.0; 20], params(1, 1, 1.0)).unwrap();
        for (xi, yi) in xs.iter().zip(&y) {
            assert!((m.predict(&[*xi]) - yi).abs() < 1e-12);
        }
        assert!(m.train_sse().last().unwrap().abs() < 1e-20);
    }

    #[test]
    fn bad_params_rejected() {
        let x = Matrix::column(vec![0.0, 1.0]);
        for p in [params(0, 1, 0.1), params(1, 0, 0.1), params(1, 9, 0.1), params(1, 2, 1.5)] {
            assert!(BoostedTrees::fit(&x, &[0.0, 1.0], &[1.0; 2], p).is_err());
        }
    }

    #[test]
    fn deep_trees_respect_min_leaf() {
        let n = 64;
        let x = Matrix::column((0..n).map(|i| i as f64).collect());
        let y: Vec<f64> = (0..n).map(|i| ((i * 7) % 5) as f64).collect();
        let p = BoostParams { rounds: 1, depth: 8, learning_rate: 1.0, min_leaf: 4 };
        let m = BoostedTrees::fit(&x, &y, &vec![1.0; n], p).unwrap();
        assert!(m.trees()[0].leaf_count() <= n / 4);
    }
}
