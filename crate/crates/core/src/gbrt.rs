//! Gradient-boosted regression trees under Huber loss.
//!
//! Each stage re-estimates the Huber transition `delta = 1.35 * MAD` of the
//! current residuals, fits a least-squares CART tree to the Huber gradient,
//! then replaces every leaf value by the exact Huber location of the
//! residuals that fall in that leaf. Nodes record how many training rows
//! reached them, which is what path-dependent TreeSHAP needs.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Scale factor between MAD and the Huber transition point.
pub const HUBER_MAD_FACTOR: f64 = 1.35;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GbrtParams {
    pub n_trees: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    pub min_samples_leaf: usize,
}

impl Default for GbrtParams {
    fn default() -> Self {
        Self { n_trees: 300, max_depth: 3, learning_rate: 0.05, min_samples_leaf: 1 }
    }
}

impl GbrtParams {
    pub fn validate(&self) -> Result<()> {
        if self.max_depth == 0 {
            return Err(invalid("max_depth", "max_depth must be >= 1"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return Err(invalid("learning_rate", "learning_rate must be in (0, 1]"));
        }
        if self.min_samples_leaf == 0 {
            return Err(invalid("min_samples_leaf", "min_samples_leaf must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Node {
    /// Rows with `x[feature] <= threshold` go left.
    Split { feature: usize, threshold: f64, left: usize, right: usize, cover: f64 },
    Leaf { value: f64, cover: f64 },
}

impl Node {
    pub fn cover(&self) -> f64 {
        match self {
            Node::Split { cover, .. } | Node::Leaf { cover, .. } => *cover,
        }
    }
}

/// Binary tree stored as a node arena; node 0 is the root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn leaf(value: f64, cover: f64) -> Self {
        Self { nodes: vec![Node::Leaf { value, cover }] }
    }

    /// Index of the leaf `x` lands in.
    pub fn leaf_index(&self, x: &[f64]) -> usize {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf { .. } => return i,
                Node::Split { feature, threshold, left, right, .. } => {
                    i = if x[feature] <= threshold { left } else { right };
                }
            }
        }
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        match self.nodes[self.leaf_index(x)] {
            Node::Leaf { value, .. } => value,
            Node::Split { .. } => unreachable!(),
        }
    }

    /// Cover-weighted mean leaf value.
    pub fn expected_value(&self) -> f64 {
        self.node_expectation(0)
    }

    fn node_expectation(&self, i: usize) -> f64 {
        match self.nodes[i] {
            Node::Leaf { value, .. } => value,
            Node::Split { left, right, cover, .. } => {
                let (cl, cr) = (self.nodes[left].cover(), self.nodes[right].cover());
                (cl * self.node_expectation(left) + cr * self.node_expectation(right)) / cover
            }
        }
    }

    pub fn max_feature(&self) -> Option<usize> {
        self.nodes
            .iter()
            .filter_map(|n| match n {
                Node::Split { feature, .. } => Some(*feature),
                Node::Leaf { .. } => None,
            })
            .max()
    }

    /// Checks the arena shape and that every cover is usable: finite and
    /// non-negative, positive on internal nodes, and equal to the sum of the
    /// children's covers.
    pub fn check_coverage(&self) -> Result<()> {
        if self.nodes.is_empty() {
            return Err(Error::MissingCoverage);
        }
        for (i, n) in self.nodes.iter().enumerate() {
            let c = n.cover();
            if !c.is_finite() || c < 0.0 {
                return Err(Error::MissingCoverage);
            }
            if let Node::Split { left, right, cover, .. } = *n {
                if left <= i || right <= i || left >= self.nodes.len() || right >= self.nodes.len() {
                    return Err(invalid("tree", "child indices must point forward inside the arena"));
                }
                let sum = self.nodes[left].cover() + self.nodes[right].cover();
                if !(cover > 0.0) || libm::fabs(sum - cover) > 1e-9 * cover {
                    return Err(Error::MissingCoverage);
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeEnsemble {
    pub base_score: f64,
    pub learning_rate: f64,
    pub n_features: usize,
    pub trees: Vec<Tree>,
}

impl TreeEnsemble {
    pub fn check_coverage(&self) -> Result<()> {
        self.trees.iter().try_for_each(Tree::check_coverage)
    }

    /// Mean prediction over the training distribution encoded by the covers.
    pub fn expected_value(&self) -> f64 {
        self.base_score + self.learning_rate * self.trees.iter().map(Tree::expected_value).sum::<f64>()
    }

    pub(crate) fn predict_unchecked(&self, x: &[f64]) -> f64 {
        self.base_score + self.learning_rate * self.trees.iter().map(|t| t.predict(x)).sum::<f64>()
    }
}

/// `base_score + learning_rate * sum of leaf values`.
pub fn predict(e: &TreeEnsemble, x: &[f64]) -> Result<f64> {
    if x.len() != e.n_features {
        return Err(Error::DimMismatch { expected: e.n_features, found: x.len() });
    }
    Ok(e.predict_unchecked(x))
}

/// `1 - SS_res / SS_tot` on the given rows.
pub fn r_squared(e: &TreeEnsemble, x: &[Vec<f64>], y: &[f64]) -> Result<f64> {
    check_design(x, y)?;
    let m = y.iter().sum::<f64>() / y.len() as f64;
    let ss_tot: f64 = y.iter().map(|v| (v - m) * (v - m)).sum();
    if ss_tot == 0.0 {
        return Err(Error::ZeroVariance);
    }
    let mut ss_res = 0.0;
    for (row, &t) in x.iter().zip(y) {
        let p = predict(e, row)?;
        ss_res += (t - p) * (t - p);
    }
    Ok(1.0 - ss_res / ss_tot)
}

pub fn huber_loss(r: f64, delta: f64) -> f64 {
    let a = libm::fabs(r);
    if a <= delta {
        0.5 * r * r
    } else {
        delta * (a - 0.5 * delta)
    }
}

fn huber_gradient(r: f64, delta: f64) -> f64 {
    if libm::fabs(r) <= delta {
        r
    } else {
        delta * r.signum()
    }
}

pub fn total_huber_loss(residuals: &[f64], delta: f64) -> f64 {
    residuals.iter().map(|&r| huber_loss(r, delta)).sum()
}

/// Median (mean of the middle pair for even lengths). `v` must be non-empty.
pub fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

/// Median absolute deviation from the median.
pub fn mad(v: &[f64]) -> f64 {
    let m = median(v);
    let dev: Vec<f64> = v.iter().map(|x| libm::fabs(x - m)).collect();
    median(&dev)
}

/// Huber transition point for a residual vector. Falls back to the largest
/// deviation from the median when the MAD is zero.
pub fn huber_delta(residuals: &[f64]) -> f64 {
    let d = HUBER_MAD_FACTOR * mad(residuals);
    if d > 0.0 {
        return d;
    }
    let m = median(residuals);
    residuals.iter().map(|x| libm::fabs(x - m)).fold(0.0, f64::max)
}

/// Minimizer of `sum huber(v_i - m, delta)` by iteratively reweighted means
/// started from the median.
pub fn huber_location(v: &[f64], delta: f64) -> f64 {
    let start = median(v);
    if !(delta > 0.0) {
        return start;
    }
    let mut m = start;
    for _ in 0..500 {
        let (mut sw, mut swy) = (0.0, 0.0);
        for &y in v {
            let a = libm::fabs(y - m);
            let w = if a <= delta { 1.0 } else { delta / a };
            sw += w;
            swy += w * y;
        }
        let next = swy / sw;
        let done = libm::fabs(next - m) <= 1e-13 * (1.0 + libm::fabs(m));
        m = next;
        if done {
            break;
        }
    }
    let loss = |c: f64| v.iter().map(|&y| huber_loss(y - c, delta)).sum::<f64>();
    if loss(start) < loss(m) {
        start
    } else {
        m
    }
}

fn check_design(x: &[Vec<f64>], y: &[f64]) -> Result<usize> {
    if x.is_empty() {
        return Err(Error::Empty("design matrix"));
    }
    if x.len() != y.len() {
        return Err(Error::DimMismatch { expected: x.len(), found: y.len() });
    }
    let p = x[0].len();
    for row in x {
        if row.len() != p {
            return Err(Error::DimMismatch { expected: p, found: row.len() });
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(invalid("x", "design matrix contains non-finite values"));
        }
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(invalid("y", "target contains non-finite values"));
    }
    Ok(p)
}

/// Per-stage training loss, both measured at that stage's `delta`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StageLoss {
    pub delta: f64,
    pub before: f64,
    pub after: f64,
}

pub fn fit_gbrt(x: &[Vec<f64>], y: &[f64], hp: &GbrtParams) -> Result<TreeEnsemble> {
    fit_gbrt_traced(x, y, hp).map(|(e, _)| e)
}

pub fn fit_gbrt_traced(x: &[Vec<f64>], y: &[f64], hp: &GbrtParams) -> Result<(TreeEnsemble, Vec<StageLoss>)> {
    hp.validate()?;
    let p = check_design(x, y)?;
    if x.len() < 2 {
        return Err(invalid("x", "need at least 2 rows"));
    }
    let base_score = huber_location(y, huber_delta(y));
    let mut pred = vec![base_score; y.len()];
    let mut trees = Vec::with_capacity(hp.n_trees);
    let mut trace = Vec::with_capacity(hp.n_trees);
    let all: Vec<usize> = (0..y.len()).collect();
    for _ in 0..hp.n_trees {
        let resid: Vec<f64> = y.iter().zip(&pred).map(|(t, f)| t - f).collect();
        let delta = huber_delta(&resid);
        let grad: Vec<f64> = resid.iter().map(|&r| huber_gradient(r, delta)).collect();
        let mut builder = Builder { x, grad: &grad, resid: &resid, delta, hp, nodes: Vec::new() };
        builder.grow(all.clone(), 0);
        let tree = Tree { nodes: builder.nodes };
        for (f, row) in pred.iter_mut().zip(x) {
            *f += hp.learning_rate * tree.predict(row);
        }
        let after: Vec<f64> = y.iter().zip(&pred).map(|(t, f)| t - f).collect();
        trace.push(StageLoss {
            delta,
            before: total_huber_loss(&resid, delta),
            after: total_huber_loss(&after, delta),
        });
        trees.push(tree);
    }
    Ok((TreeEnsemble { base_score, learning_rate: hp.learning_rate, n_features: p, trees }, trace))
}

struct Builder<'a> {
    x: &'a [Vec<f64>],
    grad: &'a [f64],
    resid: &'a [f64],
    delta: f64,
    hp: &'a GbrtParams,
    nodes: Vec<Node>,
}

struct SplitChoice {
    feature: usize,
    threshold: f64,
    left: Vec<usize>,
    right: Vec<usize>,
}

impl Builder<'_> {
    fn grow(&mut self, idx: Vec<usize>, depth: usize) -> usize {
        let at = self.nodes.len();
        let cover = idx.len() as f64;
        let choice = if depth < self.hp.max_depth { self.best_split(&idx) } else { None };
        match choice {
            None => {
                let r: Vec<f64> = idx.iter().map(|&i| self.resid[i]).collect();
                self.nodes.push(Node::Leaf { value: huber_location(&r, self.delta), cover });
            }
            Some(s) => {
                self.nodes.push(Node::Leaf { value: 0.0, cover });
                let left = self.grow(s.left, depth + 1);
                let right = self.grow(s.right, depth + 1);
                self.nodes[at] = Node::Split { feature: s.feature, threshold: s.threshold, left, right, cover };
            }
        }
        at
    }

    fn best_split(&self, idx: &[usize]) -> Option<SplitChoice> {
        let n = idx.len();
        let min_leaf = self.hp.min_samples_leaf;
        if n < 2 * min_leaf {
            return None;
        }
        let total: f64 = idx.iter().map(|&i| self.grad[i]).sum();
        let sq: f64 = idx.iter().map(|&i| self.grad[i] * self.grad[i]).sum();
        let parent = total * total / n as f64;
        let mut best_gain = 1e-12 * sq;
        let mut best: Option<(usize, usize, f64, Vec<usize>)> = None;
        for f in 0..self.x[0].len() {
            let mut order = idx.to_vec();
            order.sort_by(|&a, &b| self.x[a][f].total_cmp(&self.x[b][f]).then(a.cmp(&b)));
            let mut left_sum = 0.0;
            for pos in 1..n {
                left_sum += self.grad[order[pos - 1]];
                if pos < min_leaf || n - pos < min_leaf {
                    continue;
                }
                let (lo, hi) = (self.x[order[pos - 1]][f], self.x[order[pos]][f]);
                if !(lo < hi) {
                    continue;
                }
                let right_sum = total - left_sum;
                let gain = left_sum * left_sum / pos as f64 + right_sum * right_sum / (n - pos) as f64 - parent;
                if gain > best_gain {
                    best_gain = gain;
                    let mid = 0.5 * (lo + hi);
                    let threshold = if mid < hi { mid } else { lo };
                    best = Some((f, pos, threshold, order.clone()));
                }
            }
        }
        best.map(|(feature, pos, threshold, order)| {
            let mut left = order[..pos].to_vec();
            let mut right = order[pos..].to_vec();
            left.sort_unstable();
            right.sort_unstable();
            SplitChoice { feature, threshold, left, right }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn column(v: &[f64]) -> Vec<Vec<f64>> {
        v.iter().map(|&a| vec![a]).collect()
    }

    #[test]
    fn zero_trees_predict_base() {
        let x = column(&[0.0, 1.0, 2.0, 3.0]);
        let y = [1.0, 2.0, 3.0, 10.0];
        let e = fit_gbrt(&x, &y, &GbrtParams { n_trees: 0, ..GbrtParams::default() }).unwrap();
        assert!(e.trees.is_empty());
        for row in &x {
            assert_eq!(predict(&e, row).unwrap(), e.base_score);
        }
        assert_eq!(e.expected_value(), e.base_score);
    }

    #[test]
    fn stump_fits_step_exactly() {
        let x = column(&[0.0, 1.0, 2.0, 3.0]);
        let y = [0.0, 0.0, 1.0, 1.0];
        let hp = GbrtParams { n_trees: 1, max_depth: 1, learning_rate: 1.0, min_samples_leaf: 1 };
        let e = fit_gbrt(&x, &y, &hp).unwrap();
        match e.trees[0].nodes[0] {
            Node::Split { feature, threshold, cover, .. } => {
                assert_eq!((feature, threshold, cover), (0, 1.5, 4.0));
            }
            Node::Leaf { .. } => panic!("expected a split"),
        }
        for (row, t) in x.iter().zip(&y) {
            assert!((predict(&e, row).unwrap() - t).abs() < 1e-12);
        }
    }

    #[test]
    fn single_stump_prediction() {
        let e = TreeEnsemble {
            base_score: 2.0,
            learning_rate: 0.5,
            n_features: 2,
            trees: vec![Tree {
                nodes: vec![
                    Node::Split { feature: 1, threshold: 0.0, left: 1, right: 2, cover: 3.0 },
                    Node::Leaf { value: -4.0, cover: 1.0 },
                    Node::Leaf { value: 6.0, cover: 2.0 },
                ],
            }],
        };
        assert_eq!(predict(&e, &[9.0, -1.0]).unwrap(), 0.0);
        assert_eq!(predict(&e, &[9.0, 0.5]).unwrap(), 5.0);
        assert!((e.expected_value() - (2.0 + 0.5 * (8.0 / 3.0))).abs() < 1e-12);
        assert!(predict(&e, &[1.0]).is_err());
    }

    #[test]
    fn linear_target_fits_well() {
        let x: Vec<Vec<f64>> = (0..100).map(|i| vec![f64::from(i) / 99.0, f64::from((i * 37) % 11)]).collect();
        let y: Vec<f64> = x.iter().map(|r| r[0]).collect();
        let e = fit_gbrt(&x, &y, &GbrtParams::default()).unwrap();
        assert!(r_squared(&e, &x, &y).unwrap() >= 0.95);
    }

    #[test]
    fn r_squared_definitions() {
        let x = column(&[0.0, 1.0, 2.0]);
        let mean_only = TreeEnsemble { base_score: 2.0, learning_rate: 1.0, n_features: 1, trees: vec![] };
        assert_eq!(r_squared(&mean_only, &x, &[1.0, 2.0, 3.0]).unwrap(), 0.0);
        let exact = TreeEnsemble { base_score: 0.0, learning_rate: 1.0, n_features: 1, trees: vec![] };
        assert_eq!(r_squared(&exact, &x, &[0.0, 0.0, 0.0]), Err(Error::ZeroVariance));
        let far = TreeEnsemble { base_score: 10.0, learning_rate: 1.0, n_features: 1, trees: vec![] };
        assert!(r_squared(&far, &x, &[1.0, 2.0, 3.0]).unwrap() < 0.0);
        let perfect = fit_gbrt(&x, &[1.0, 2.0, 3.0], &GbrtParams { n_trees: 1, max_depth: 2, learning_rate: 1.0, min_samples_leaf: 1 }).unwrap();
        assert!((r_squared(&perfect, &x, &[1.0, 2.0, 3.0]).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn huber_location_cases() {
        assert_eq!(huber_location(&[1.0, 2.0, 3.0], 10.0), 2.0);
        // Large delta: plain mean.
        assert!((huber_location(&[0.0, 0.0, 0.0, 8.0], 100.0) - 2.0).abs() < 1e-12);
        // Small delta: close to the median, resistant to the outlier.
        let m = huber_location(&[0.0, 0.1, 0.2, 100.0], 0.5);
        assert!(m < 0.5, "{m}");
        assert_eq!(median(&[3.0, 1.0, 2.0, 10.0]), 2.5);
        assert_eq!(mad(&[1.0, 1.0, 2.0, 2.0, 4.0, 6.0, 9.0]), 1.0);
    }

    #[test]
    fn covers_are_consistent() {
        let x: Vec<Vec<f64>> = (0..40).map(|i| vec![f64::from(i % 7), f64::from(i % 5)]).collect();
        let y: Vec<f64> = x.iter().map(|r| r[0] * r[1]).collect();
        let e = fit_gbrt(&x, &y, &GbrtParams { n_trees: 20, ..GbrtParams::default() }).unwrap();
        e.check_coverage().unwrap();
        for t in &e.trees {
            assert_eq!(t.nodes[0].cover(), 40.0);
        }
    }

    #[test]
    fn rejects_bad_input() {
        let hp = GbrtParams::default();
        assert!(fit_gbrt(&[], &[], &hp).is_err());
        assert!(fit_gbrt(&column(&[1.0, 2.0]), &[1.0, f64::NAN], &hp).is_err());
        assert!(fit_gbrt(&column(&[1.0]), &[1.0], &hp).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn stage_loss_never_increases(
            rows in proptest::collection::vec((0i32..10, 0i32..10, -50i32..50), 4..40),
            eta in 0.05f64..1.0,
        ) {
            let x: Vec<Vec<f64>> = rows.iter().map(|&(a, b, _)| vec![f64::from(a), f64::from(b)]).collect();
            let y: Vec<f64> = rows.iter().map(|&(a, _, n)| f64::from(a) + f64::from(n) / 3.0).collect();
            let hp = GbrtParams { n_trees: 25, learning_rate: eta, ..GbrtParams::default() };
            let (_, trace) = fit_gbrt_traced(&x, &y, &hp).unwrap();
            for s in trace {
                prop_assert!(s.after <= s.before * (1.0 + 1e-12) + 1e-12, "{s:?}");
            }
        }

        #[test]
        fn fitting_is_deterministic(rows in proptest::collection::vec((0i32..6, -20i32..20), 3..30)) {
            let x: Vec<Vec<f64>> = rows.iter().map(|&(a, _)| vec![f64::from(a)]).collect();
            let y: Vec<f64> = rows.iter().map(|&(_, b)| f64::from(b)).collect();
            let hp = GbrtParams { n_trees: 10, ..GbrtParams::default() };
            prop_assert_eq!(fit_gbrt(&x, &y, &hp).unwrap(), fit_gbrt(&x, &y, &hp).unwrap());
        }
    }
}
