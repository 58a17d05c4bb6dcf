//! Exact Shapley attributions for tree ensembles.
//!
//! [`tree_shap`] is the polynomial-time path-dependent algorithm: it walks
//! every root-to-leaf path once, tracking for each distinct feature on the
//! path the fraction of training cover that flows along it when the feature
//! is unknown (`zero`) and whether `x` follows it when known (`one`).
//! [`brute_force_shap`] enumerates feature subsets and serves as its oracle.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::gbrt::{Node, Tree, TreeEnsemble};

/// Largest feature count [`brute_force_shap`] accepts.
pub const BRUTE_FORCE_MAX_FEATURES: usize = 12;

#[derive(Debug, Clone, Copy)]
struct PathElem {
    feature: Option<usize>,
    zero: f64,
    one: f64,
    weight: f64,
}

fn extend(path: &mut Vec<PathElem>, zero: f64, one: f64, feature: Option<usize>) {
    let depth = path.len();
    path.push(PathElem { feature, zero, one, weight: if depth == 0 { 1.0 } else { 0.0 } });
    let d1 = (depth + 1) as f64;
    for i in (0..depth).rev() {
        let w = path[i].weight;
        path[i + 1].weight += one * w * (i + 1) as f64 / d1;
        path[i].weight = zero * w * (depth - i) as f64 / d1;
    }
}

fn unwind(path: &mut Vec<PathElem>, k: usize) {
    let depth = path.len() - 1;
    let PathElem { zero, one, .. } = path[k];
    let d1 = (depth + 1) as f64;
    let mut next = path[depth].weight;
    for i in (0..depth).rev() {
        if one != 0.0 {
            let tmp = path[i].weight;
            path[i].weight = next * d1 / ((i + 1) as f64 * one);
            next = tmp - path[i].weight * zero * (depth - i) as f64 / d1;
        } else {
            path[i].weight = path[i].weight * d1 / (zero * (depth - i) as f64);
        }
    }
    for i in k..depth {
        path[i].feature = path[i + 1].feature;
        path[i].zero = path[i + 1].zero;
        path[i].one = path[i + 1].one;
    }
    path.pop();
}

fn unwound_sum(path: &[PathElem], k: usize) -> f64 {
    let depth = path.len() - 1;
    let PathElem { zero, one, .. } = path[k];
    let d1 = (depth + 1) as f64;
    let mut next = path[depth].weight;
    let mut total = 0.0;
    for i in (0..depth).rev() {
        if one != 0.0 {
            let tmp = next * d1 / ((i + 1) as f64 * one);
            total += tmp;
            next = path[i].weight - tmp * zero * (depth - i) as f64 / d1;
        } else {
            total += path[i].weight / zero / ((depth - i) as f64 / d1);
        }
    }
    total
}

#[allow(clippy::too_many_arguments)]
fn recurse(
    tree: &Tree,
    node: usize,
    x: &[f64],
    parent: &[PathElem],
    zero: f64,
    one: f64,
    feature: Option<usize>,
    phi: &mut [f64],
) {
    let mut path = parent.to_vec();
    extend(&mut path, zero, one, feature);
    match tree.nodes[node] {
        Node::Leaf { value, .. } => {
            for k in 1..path.len() {
                let w = unwound_sum(&path, k);
                let e = path[k];
                if let Some(f) = e.feature {
                    phi[f] += w * (e.one - e.zero) * value;
                }
            }
        }
        Node::Split { feature: f, threshold, left, right, cover } => {
            let (hot, cold) = if x[f] <= threshold { (left, right) } else { (right, left) };
            let hot_frac = tree.nodes[hot].cover() / cover;
            let cold_frac = tree.nodes[cold].cover() / cover;
            let (mut in_zero, mut in_one) = (1.0, 1.0);
            if let Some(k) = path.iter().position(|e| e.feature == Some(f)) {
                in_zero = path[k].zero;
                in_one = path[k].one;
                unwind(&mut path, k);
            }
            recurse(tree, hot, x, &path, hot_frac * in_zero, in_one, Some(f), phi);
            // A branch with no cover and not taken by x carries zero weight.
            if cold_frac * in_zero != 0.0 {
                recurse(tree, cold, x, &path, cold_frac * in_zero, 0.0, Some(f), phi);
            }
        }
    }
}

fn check_input(e: &TreeEnsemble, x: &[f64]) -> Result<()> {
    if x.len() != e.n_features {
        return Err(Error::DimMismatch { expected: e.n_features, found: x.len() });
    }
    e.check_coverage()?;
    if e.trees.iter().filter_map(Tree::max_feature).any(|f| f >= e.n_features) {
        return Err(Error::DimMismatch { expected: e.n_features, found: e.trees.iter().filter_map(Tree::max_feature).max().unwrap_or(0) + 1 });
    }
    Ok(())
}

/// Path-dependent TreeSHAP values of `x`. They satisfy
/// `sum(phi) + e.expected_value() == predict(e, x)` up to rounding.
pub fn tree_shap(e: &TreeEnsemble, x: &[f64]) -> Result<Vec<f64>> {
    check_input(e, x)?;
    let mut phi = vec![0.0; e.n_features];
    let mut tree_phi = vec![0.0; e.n_features];
    for t in &e.trees {
        tree_phi.iter_mut().for_each(|p| *p = 0.0);
        recurse(t, 0, x, &[], 1.0, 1.0, None, &mut tree_phi);
        for (p, tp) in phi.iter_mut().zip(&tree_phi) {
            *p += e.learning_rate * tp;
        }
    }
    Ok(phi)
}

/// Same covers as `t`, recounted from the rows that reach each node.
fn recount(t: &Tree, rows: &[Vec<f64>]) -> Tree {
    let mut counts = vec![0.0f64; t.nodes.len()];
    for r in rows {
        let mut i = 0;
        loop {
            counts[i] += 1.0;
            match t.nodes[i] {
                Node::Leaf { .. } => break,
                Node::Split { feature, threshold, left, right, .. } => {
                    i = if r[feature] <= threshold { left } else { right };
                }
            }
        }
    }
    let nodes = t
        .nodes
        .iter()
        .zip(&counts)
        .map(|(n, &c)| match *n {
            Node::Leaf { value, .. } => Node::Leaf { value, cover: c },
            Node::Split { feature, threshold, left, right, .. } => Node::Split { feature, threshold, left, right, cover: c },
        })
        .collect();
    Tree { nodes }
}

// Expected output of `node` when only features in `known` are fixed to `x`.
fn conditional(t: &Tree, node: usize, x: &[f64], known: u32) -> Result<f64> {
    match t.nodes[node] {
        Node::Leaf { value, .. } => Ok(value),
        Node::Split { feature, threshold, left, right, cover } => {
            if known & (1 << feature) != 0 {
                let next = if x[feature] <= threshold { left } else { right };
                return conditional(t, next, x, known);
            }
            if !(cover > 0.0) {
                return Err(Error::MissingCoverage);
            }
            let (cl, cr) = (t.nodes[left].cover(), t.nodes[right].cover());
            let mut v = 0.0;
            if cl > 0.0 {
                v += cl * conditional(t, left, x, known)?;
            }
            if cr > 0.0 {
                v += cr * conditional(t, right, x, known)?;
            }
            Ok(v / cover)
        }
    }
}

/// Shapley values by enumerating all feature subsets, with the value of a
/// subset being the cover-weighted conditional expectation of the ensemble.
/// With `background`, covers are recounted from those rows first.
pub fn brute_force_shap(e: &TreeEnsemble, x: &[f64], background: Option<&[Vec<f64>]>) -> Result<Vec<f64>> {
    let m = e.n_features;
    if m > BRUTE_FORCE_MAX_FEATURES {
        return Err(Error::TooManyFeatures { max: BRUTE_FORCE_MAX_FEATURES, found: m });
    }
    if x.len() != m {
        return Err(Error::DimMismatch { expected: m, found: x.len() });
    }
    let trees: Vec<Tree> = match background {
        Some(rows) => {
            if let Some(bad) = rows.iter().find(|r| r.len() != m) {
                return Err(Error::DimMismatch { expected: m, found: bad.len() });
            }
            e.trees.iter().map(|t| recount(t, rows)).collect()
        }
        None => {
            e.check_coverage()?;
            e.trees.clone()
        }
    };
    let n_sets = 1usize << m;
    let mut value = vec![0.0; n_sets];
    for (s, v) in value.iter_mut().enumerate() {
        let mut acc = 0.0;
        for t in &trees {
            acc += conditional(t, 0, x, s as u32)?;
        }
        *v = e.base_score + e.learning_rate * acc;
    }
    // Shapley weight |S|! (m - |S| - 1)! / m! by subset size.
    let mut fact = vec![1.0f64; m + 1];
    for i in 1..=m {
        fact[i] = fact[i - 1] * i as f64;
    }
    let weight: Vec<f64> = (0..m).map(|s| fact[s] * fact[m - s - 1] / fact[m]).collect();
    let mut phi = vec![0.0; m];
    for (j, p) in phi.iter_mut().enumerate() {
        let bit = 1usize << j;
        for s in 0..n_sets {
            if s & bit == 0 {
                *p += weight[s.count_ones() as usize] * (value[s | bit] - value[s]);
            }
        }
    }
    Ok(phi)
}
