//! Random forest classifier with mean-decrease-in-impurity importances.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureTable;
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Criterion {
    Gini,
    Entropy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ForestConfig {
    pub n_estimators: usize,
    pub criterion: Criterion,
    /// Fraction of features tried per split; `None` means `ceil(sqrt(p))` features.
    pub max_features: Option<f64>,
    pub min_samples_split: usize,
    pub min_samples_leaf: usize,
    pub bootstrap: bool,
    /// Rows drawn per tree; defaults to the table size.
    pub max_samples: Option<usize>,
    pub seed: u64,
    pub threads: usize,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig {
            n_estimators: 100,
            criterion: Criterion::Gini,
            max_features: None,
            min_samples_split: 2,
            min_samples_leaf: 1,
            bootstrap: true,
            max_samples: None,
            seed: 0,
            threads: 1,
        }
    }
}

impl ForestConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_estimators == 0 {
            return Err(Error::config("n_estimators must be at least 1"));
        }
        if let Some(f) = self.max_features {
            if !(f > 0.0 && f <= 1.0) {
                return Err(Error::config("max_features must be in (0, 1]"));
            }
        }
        if self.min_samples_split < 2 || self.min_samples_leaf < 1 {
            return Err(Error::config("min_samples_split >= 2 and min_samples_leaf >= 1 required"));
        }
        if self.max_samples == Some(0) {
            return Err(Error::config("max_samples must be positive"));
        }
        Ok(())
    }

    pub fn features_per_split(&self, p: usize) -> usize {
        let k = match self.max_features {
            Some(f) => (f * p as f64).ceil() as usize,
            None => (p as f64).sqrt().ceil() as usize,
        };
        k.clamp(1, p)
    }
}

/// Impurity of a node with the given class counts.
pub fn impurity(counts: &[f64], criterion: Criterion) -> Result<f64> {
    let total: f64 = counts.iter().sum();
    if !(total > 0.0) || counts.iter().any(|&c| c < 0.0) {
        return Err(Error::invalid("impurity needs non-negative counts with a positive total"));
    }
    Ok(impurity_unchecked(counts, total, criterion))
}

fn impurity_unchecked(counts: &[f64], total: f64, criterion: Criterion) -> f64 {
    match criterion {
        Criterion::Gini => 1.0 - counts.iter().map(|c| (c / total).powi(2)).sum::<f64>(),
        Criterion::Entropy => -counts
            .iter()
            .filter(|&&c| c > 0.0)
            .map(|&c| {
                let p = c / total;
                p * p.log2()
            })
            .sum::<f64>(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node {
    /// Split feature; `None` for leaves.
    pub feature: Option<usize>,
    pub threshold: f64,
    pub left: usize,
    pub right: usize,
    /// `[negatives, positives]` among the tree's training samples.
    pub counts: [f64; 2],
    pub impurity: f64,
}

impl Node {
    fn n(&self) -> f64 {
        self.counts[0] + self.counts[1]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    pub nodes: Vec<Node>,
    /// Training rows drawn for this tree, with repeats.
    pub samples: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Forest {
    pub trees: Vec<Tree>,
    pub columns: Vec<String>,
    pub config: ForestConfig,
}

struct Grower<'a> {
    table: &'a FeatureTable,
    labels: &'a [u8],
    cfg: &'a ForestConfig,
    mtry: usize,
}

struct Best {
    feature: usize,
    threshold: f64,
    decrease: f64,
    split_at: usize,
}

impl Grower<'_> {
    fn counts(&self, idx: &[usize]) -> [f64; 2] {
        let pos = idx.iter().filter(|&&i| self.labels[i] == 1).count() as f64;
        [idx.len() as f64 - pos, pos]
    }

    fn value(&self, i: usize, j: usize) -> f64 {
        self.table.data()[i * self.table.n_cols() + j]
    }

    /// Best split of `idx` on feature `j`; sorts `idx` by that feature.
    fn best_on_feature(&self, idx: &mut [usize], j: usize, parent: f64) -> Option<(f64, f64, usize)> {
        idx.sort_by(|&a, &b| self.value(a, j).total_cmp(&self.value(b, j)));
        let n = idx.len();
        let total = self.counts(idx);
        let mut left = [0.0, 0.0];
        let leaf = self.cfg.min_samples_leaf;
        let mut best: Option<(f64, f64, usize)> = None;
        for k in 0..n - 1 {
            left[usize::from(self.labels[idx[k]])] += 1.0;
            let (v, next) = (self.value(idx[k], j), self.value(idx[k + 1], j));
            if v == next || k + 1 < leaf || n - k - 1 < leaf {
                continue;
            }
            let nl = (k + 1) as f64;
            let nr = n as f64 - nl;
            let right = [total[0] - left[0], total[1] - left[1]];
            let child = nl / n as f64 * impurity_unchecked(&left, nl, self.cfg.criterion)
                + nr / n as f64 * impurity_unchecked(&right, nr, self.cfg.criterion);
            let dec = (parent - child).max(0.0);
            if best.map_or(true, |b| dec > b.0) {
                best = Some((dec, v + (next - v) / 2.0, k + 1));
            }
        }
        best
    }

    fn grow(&self, samples: Vec<usize>, rng: &mut ChaCha8Rng) -> Vec<Node> {
        let p = self.table.n_cols();
        let mut nodes = Vec::new();
        // (node id, sample slice) work stack
        let mut stack = vec![(0usize, samples)];
        let counts = self.counts(&stack[0].1);
        nodes.push(self.leaf(counts));
        let mut features: Vec<usize> = (0..p).collect();
        while let Some((id, mut idx)) = stack.pop() {
            let node = &nodes[id];
            let n = idx.len();
            if node.impurity <= 0.0 || n < self.cfg.min_samples_split || n < 2 * self.cfg.min_samples_leaf {
                continue;
            }
            let parent = node.impurity;
            features.shuffle(rng);
            let mut best: Option<Best> = None;
            let mut tried = 0;
            for &j in &features {
                if tried >= self.mtry {
                    break;
                }
                let Some((dec, thr, at)) = self.best_on_feature(&mut idx, j, parent) else { continue };
                tried += 1;
                let better = match &best {
                    None => true,
                    Some(b) => dec > b.decrease || (dec == b.decrease && (j < b.feature || (j == b.feature && thr < b.threshold))),
                };
                if better {
                    best = Some(Best { feature: j, threshold: thr, decrease: dec, split_at: at });
                }
            }
            let Some(b) = best else { continue };
            // re-sort by the winning feature
            idx.sort_by(|&a, &c| self.value(a, b.feature).total_cmp(&self.value(c, b.feature)));
            let right_idx = idx.split_off(b.split_at);
            let left_idx = idx;
            let (l, r) = (nodes.len(), nodes.len() + 1);
            nodes.push(self.leaf(self.counts(&left_idx)));
            nodes.push(self.leaf(self.counts(&right_idx)));
            let node = &mut nodes[id];
            node.feature = Some(b.feature);
            node.threshold = b.threshold;
            node.left = l;
            node.right = r;
            stack.push((r, right_idx));
            stack.push((l, left_idx));
        }
        nodes
    }

    fn leaf(&self, counts: [f64; 2]) -> Node {
        let n = counts[0] + counts[1];
        Node { feature: None, threshold: 0.0, left: 0, right: 0, counts, impurity: impurity_unchecked(&counts, n, self.cfg.criterion) }
    }

    fn tree(&self, t: usize) -> Tree {
        let mut rng = rng::stream(self.cfg.seed, &[0xF0, t as u64]);
        let n = self.table.n_rows();
        let m = self.cfg.max_samples.unwrap_or(n);
        let samples: Vec<usize> = if self.cfg.bootstrap {
            (0..m).map(|_| rng.gen_range(0..n)).collect()
        } else if m >= n {
            (0..n).collect()
        } else {
            let mut all: Vec<usize> = (0..n).collect();
            all.partial_shuffle(&mut rng, m);
            let mut s = all[..m].to_vec();
            s.sort_unstable();
            s
        };
        let nodes = self.grow(samples.clone(), &mut rng);
        Tree { nodes, samples }
    }
}

/// Fit a forest. Trees use independent seed-derived random streams, so the
/// result does not depend on `config.threads`.
pub fn forest_fit(table: &FeatureTable, labels: &[u8], config: &ForestConfig) -> Result<Forest> {
    config.validate()?;
    if labels.len() != table.n_rows() || labels.is_empty() {
        return Err(Error::shape(format!("{} labels for {} rows", labels.len(), table.n_rows())));
    }
    if labels.iter().any(|&y| y > 1) {
        return Err(Error::invalid("labels must be 0 or 1"));
    }
    let pos = labels.iter().filter(|&&y| y == 1).count();
    if pos == 0 || pos == labels.len() {
        return Err(Error::invalid("both classes must be present"));
    }
    let g = Grower { table, labels, cfg: config, mtry: config.features_per_split(table.n_cols()) };
    let threads = config.threads.max(1).min(config.n_estimators);
    let trees = if threads == 1 {
        (0..config.n_estimators).map(|t| g.tree(t)).collect()
    } else {
        let mut slots: Vec<Option<Tree>> = vec![None; config.n_estimators];
        let chunk = config.n_estimators.div_ceil(threads);
        std::thread::scope(|s| {
            for (c, out) in slots.chunks_mut(chunk).enumerate() {
                let g = &g;
                s.spawn(move || {
                    for (k, slot) in out.iter_mut().enumerate() {
                        *slot = Some(g.tree(c * chunk + k));
                    }
                });
            }
        });
        slots.into_iter().map(Option::unwrap).collect()
    };
    Ok(Forest { trees, columns: table.columns().to_vec(), config: config.clone() })
}

impl Tree {
    pub fn leaf_of(&self, x: &[f64]) -> usize {
        let mut k = 0;
        while let Some(j) = self.nodes[k].feature {
            let n = &self.nodes[k];
            k = if x[j] <= n.threshold { n.left } else { n.right };
        }
        k
    }
}

pub fn forest_predict_proba(forest: &Forest, table: &FeatureTable) -> Result<Vec<f64>> {
    if table.columns() != forest.columns.as_slice() {
        return Err(Error::shape(format!("table columns {:?} do not match forest columns {:?}", table.columns(), forest.columns)));
    }
    let nt = forest.trees.len() as f64;
    Ok((0..table.n_rows())
        .map(|i| {
            let x = table.row(i);
            forest
                .trees
                .iter()
                .map(|t| {
                    let leaf = &t.nodes[t.leaf_of(x)];
                    leaf.counts[1] / leaf.n()
                })
                .sum::<f64>()
                / nt
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Importance {
    pub columns: Vec<String>,
    pub values: Vec<f64>,
    /// Every tree is a single leaf; `values` are then all zero and unnormalized.
    pub degenerate: bool,
}

/// Mean decrease in impurity, averaged over trees and normalized to sum 1.
pub fn mdi(forest: &Forest) -> Importance {
    let p = forest.columns.len();
    let mut acc = vec![0.0; p];
    for t in &forest.trees {
        let root_n = t.nodes[0].n();
        for node in &t.nodes {
            let Some(j) = node.feature else { continue };
            let (l, r) = (&t.nodes[node.left], &t.nodes[node.right]);
            let n = node.n();
            let dec = node.impurity - l.n() / n * l.impurity - r.n() / n * r.impurity;
            acc[j] += n / root_n * dec.max(0.0);
        }
    }
    let nt = forest.trees.len() as f64;
    acc.iter_mut().for_each(|v| *v /= nt);
    let total: f64 = acc.iter().sum();
    let degenerate = total <= 0.0;
    if !degenerate {
        acc.iter_mut().for_each(|v| *v /= total);
    }
    Importance { columns: forest.columns.clone(), values: acc, degenerate }
}

impl Importance {
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::Parse { path: path.into(), message: e.to_string() })?;
        w.write_record(["feature", "mdi"])?;
        for (c, v) in self.columns.iter().zip(&self.values) {
            w.write_record([c.clone(), v.to_string()])?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

impl Forest {
    /// Flat node table: `tree,node,feature,threshold,left,right,count_neg,count_pos`.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::Parse { path: path.into(), message: e.to_string() })?;
        w.write_record(["tree", "node", "feature", "threshold", "left", "right", "count_neg", "count_pos"])?;
        for (ti, t) in self.trees.iter().enumerate() {
            for (ni, n) in t.nodes.iter().enumerate() {
                let (f, thr, l, r) = match n.feature {
                    Some(j) => (self.columns[j].clone(), n.threshold.to_string(), n.left.to_string(), n.right.to_string()),
                    None => Default::default(),
                };
                w.write_record([ti.to_string(), ni.to_string(), f, thr, l, r, n.counts[0].to_string(), n.counts[1].to_string()])?;
            }
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// Read a node table written by [`Forest::write_csv`]; sample lists are not stored.
    pub fn read_csv(path: impl AsRef<Path>, columns: Vec<String>, config: ForestConfig) -> Result<Forest> {
        let path = path.as_ref();
        let perr = |m: String| Error::Parse { path: path.into(), message: m };
        let mut r = csv::Reader::from_path(path).map_err(|e| perr(e.to_string()))?;
        let mut trees: Vec<Tree> = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            let int = |s: &str| s.parse::<usize>().map_err(|e| perr(format!("{s}: {e}")));
            let num = |s: &str| s.parse::<f64>().map_err(|e| perr(format!("{s}: {e}")));
            let (ti, ni) = (int(&rec[0])?, int(&rec[1])?);
            if ti == trees.len() {
                trees.push(Tree { nodes: vec![], samples: vec![] });
            }
            let t = trees.get_mut(ti).ok_or_else(|| perr("trees out of order".into()))?;
            if ni != t.nodes.len() {
                return Err(perr("nodes out of order".into()));
            }
            let counts = [num(&rec[6])?, num(&rec[7])?];
            let n = counts[0] + counts[1];
            let mut node = Node { feature: None, threshold: 0.0, left: 0, right: 0, counts, impurity: impurity_unchecked(&counts, n, config.criterion) };
            if !rec[2].is_empty() {
                node.feature = Some(columns.iter().position(|c| c == &rec[2]).ok_or_else(|| perr(format!("unknown feature {}", &rec[2])))?);
                node.threshold = num(&rec[3])?;
                node.left = int(&rec[4])?;
                node.right = int(&rec[5])?;
            }
            t.nodes.push(node);
        }
        Ok(Forest { trees, columns, config })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn table(p: usize, data: Vec<f64>) -> FeatureTable {
        FeatureTable::from_matrix((0..p).map(|j| format!("f{j}")).collect(), data).unwrap()
    }

    #[test]
    fn impurity_examples() {
        assert_eq!(impurity(&[50.0, 50.0], Criterion::Gini).unwrap(), 0.5);
        assert_eq!(impurity(&[50.0, 50.0], Criterion::Entropy).unwrap(), 1.0);
        assert_eq!(impurity(&[0.0, 7.0], Criterion::Gini).unwrap(), 0.0);
        assert_eq!(impurity(&[7.0, 0.0], Criterion::Entropy).unwrap(), 0.0);
        assert!(impurity(&[0.0, 0.0], Criterion::Gini).is_err());
    }

    #[test]
    fn separable_data_splits_near_zero() {
        let x: Vec<f64> = (-10..10).map(|v| v as f64 + 0.5).collect();
        let y: Vec<u8> = x.iter().map(|&v| u8::from(v > 0.0)).collect();
        let t = table(1, x);
        let f = forest_fit(&t, &y, &ForestConfig { n_estimators: 10, ..Default::default() }).unwrap();
        for tree in &f.trees {
            assert_eq!(tree.nodes.len(), 3);
            // midpoint of the gap between classes in the drawn sample
            let xs = tree.samples.iter().map(|&i| t.row(i)[0]);
            let neg = xs.clone().filter(|&v| v < 0.0).fold(f64::NEG_INFINITY, f64::max);
            let pos = xs.filter(|&v| v > 0.0).fold(f64::INFINITY, f64::min);
            assert_eq!(tree.nodes[0].threshold, neg + (pos - neg) / 2.0);
        }
        assert_eq!(forest_predict_proba(&f, &t).unwrap().iter().map(|p| u8::from(*p > 0.5)).collect::<Vec<_>>(), y);
    }

    #[test]
    fn no_randomness_means_identical_trees() {
        let mut rng = rng::stream(3, &[]);
        let data: Vec<f64> = (0..60).map(|_| rng.gen::<f64>()).collect();
        let y: Vec<u8> = (0..20).map(|i| u8::from(data[i * 3] + data[i * 3 + 1] > 1.0)).collect();
        let t = table(3, data);
        let cfg = ForestConfig { n_estimators: 2, bootstrap: false, max_features: Some(1.0), ..Default::default() };
        let f = forest_fit(&t, &y, &cfg).unwrap();
        assert_eq!(f.trees[0], f.trees[1]);
        let a = forest_fit(&t, &y, &ForestConfig { n_estimators: 5, seed: 9, ..Default::default() }).unwrap();
        let b = forest_fit(&t, &y, &ForestConfig { n_estimators: 5, seed: 9, threads: 3, ..Default::default() }).unwrap();
        assert_eq!(a.trees, b.trees);
    }

    #[test]
    fn averaging_contract() {
        // hand-built forest: 40 trees predicting 1, 60 predicting 0
        let leaf = |c: [f64; 2]| Node { feature: None, threshold: 0.0, left: 0, right: 0, counts: c, impurity: 0.0 };
        let mut trees = vec![Tree { nodes: vec![leaf([0.0, 3.0])], samples: vec![] }; 40];
        trees.extend(vec![Tree { nodes: vec![leaf([2.0, 0.0])], samples: vec![] }; 60]);
        let f = Forest { trees, columns: vec!["f0".into()], config: ForestConfig::default() };
        let p = forest_predict_proba(&f, &table(1, vec![0.3])).unwrap();
        assert!((p[0] - 0.4).abs() < 1e-12);
        assert!(mdi(&f).degenerate);
    }

    #[test]
    fn degenerate_table_gives_single_leaves() {
        let t = table(2, vec![1.0; 8]);
        let f = forest_fit(&t, &[0, 1, 0, 1], &ForestConfig { n_estimators: 3, ..Default::default() }).unwrap();
        assert!(f.trees.iter().all(|t| t.nodes.len() == 1));
        let imp = mdi(&f);
        assert!(imp.degenerate && imp.values.iter().all(|&v| v == 0.0));
    }

    fn signal_data(n: usize, seed: u64, twin: bool) -> (FeatureTable, Vec<u8>) {
        let mut rng = rng::stream(seed, &[]);
        let mut data = Vec::new();
        let mut y = Vec::new();
        for _ in 0..n {
            let s: f64 = rng.gen();
            let label = u8::from(s + 0.3 * (rng.gen::<f64>() - 0.5) > 0.5);
            data.push(s);
            if twin {
                data.push(s);
            }
            data.push(rng.gen());
            data.push(rng.gen());
            y.push(label);
        }
        (table(if twin { 4 } else { 3 }, data), y)
    }

    #[test]
    fn informative_feature_has_the_largest_mdi() {
        let (t, y) = signal_data(400, 1, false);
        let f = forest_fit(&t, &y, &ForestConfig { n_estimators: 30, ..Default::default() }).unwrap();
        let imp = mdi(&f);
        assert!((imp.values.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert!(imp.values[0] > imp.values[1] && imp.values[0] > imp.values[2]);
    }

    #[test]
    fn duplicate_twins_share_importance() {
        let (t, y) = signal_data(400, 2, true);
        let f = forest_fit(&t, &y, &ForestConfig { n_estimators: 60, ..Default::default() }).unwrap();
        let imp = mdi(&f);
        let share = imp.values[0] / (imp.values[0] + imp.values[1]);
        assert!((0.3..=0.7).contains(&share), "twin share {share}");
    }

    #[test]
    fn node_table_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let (t, y) = signal_data(50, 3, false);
        let f = forest_fit(&t, &y, &ForestConfig { n_estimators: 4, ..Default::default() }).unwrap();
        let p = dir.path().join("forest.csv");
        f.write_csv(&p).unwrap();
        let back = Forest::read_csv(&p, f.columns.clone(), f.config.clone()).unwrap();
        assert_eq!(forest_predict_proba(&back, &t).unwrap(), forest_predict_proba(&f, &t).unwrap());
    }

    /// Lowest training Brier any partition can reach: rows with identical
    /// feature vectors cannot be separated.
    fn oracle_loss(t: &FeatureTable, y: &[u8]) -> f64 {
        let mut groups: Vec<(Vec<f64>, f64, f64)> = Vec::new();
        for i in 0..y.len() {
            let x = t.row(i).to_vec();
            match groups.iter_mut().find(|g| g.0 == x) {
                Some(g) => {
                    g.1 += f64::from(y[i]);
                    g.2 += 1.0;
                }
                None => groups.push((x, f64::from(y[i]), 1.0)),
            }
        }
        groups.iter().map(|(_, s, n)| s * (1.0 - s / n)).sum::<f64>() / y.len() as f64
    }

    proptest! {
        #[test]
        fn full_tree_reaches_the_exhaustive_optimum(
            x in proptest::collection::vec(0u8..4, 24),
            y in proptest::collection::vec(0u8..=1, 12),
            n in 2usize..=12,
        ) {
            prop_assume!(y[..n].contains(&0) && y[..n].contains(&1));
            let t = table(2, x[..2 * n].iter().map(|&v| f64::from(v)).collect());
            let y = &y[..n];
            let cfg = ForestConfig { n_estimators: 1, bootstrap: false, max_features: Some(1.0), ..Default::default() };
            let f = forest_fit(&t, y, &cfg).unwrap();
            let p = forest_predict_proba(&f, &t).unwrap();
            let loss = p.iter().zip(y).map(|(p, &l)| (p - f64::from(l)).powi(2)).sum::<f64>() / n as f64;
            prop_assert!((loss - oracle_loss(&t, y)).abs() < 1e-12);
        }

        #[test]
        fn leaves_partition_the_bootstrap_sample(seed in 0u64..1000) {
            let (t, y) = signal_data(40, seed, false);
            let f = forest_fit(&t, &y, &ForestConfig { n_estimators: 3, seed, min_samples_leaf: 2, ..Default::default() }).unwrap();
            for tree in &f.trees {
                let mut leaf_counts = vec![0.0; tree.nodes.len()];
                for &i in &tree.samples {
                    leaf_counts[tree.leaf_of(t.row(i))] += 1.0;
                }
                for (k, node) in tree.nodes.iter().enumerate() {
                    if node.feature.is_none() {
                        prop_assert_eq!(leaf_counts[k], node.n());
                        prop_assert!(node.n() >= 2.0);
                    } else {
                        let (l, r) = (&tree.nodes[node.left], &tree.nodes[node.right]);
                        prop_assert!(node.impurity - l.n() / node.n() * l.impurity - r.n() / node.n() * r.impurity >= -1e-12);
                    }
                }
                prop_assert_eq!(leaf_counts.iter().sum::<f64>(), tree.samples.len() as f64);
            }
            let p = forest_predict_proba(&f, &t).unwrap();
            prop_assert!(p.iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }
}
