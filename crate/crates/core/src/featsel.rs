//! Three-stage feature selection.
//!
//! Stage 1 drops one member of every highly correlated pair (|r| above the
//! threshold), keeping whichever correlates more with the labels. Stage 2
//! iteratively eliminates the highest-VIF feature while any VIF exceeds the
//! threshold. Stage 3 ranks the rest with a random forest and recursively
//! eliminates the least important feature until `target_count` remain.

use serde::{Deserialize, Serialize};

use crate::dataio::TagTable;
use crate::error::{Error, Result};
use crate::exec;
use crate::matrix::Matrix;
use crate::rng::{self, Seed};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FeatureSelConfig {
    pub corr_threshold: f64,
    pub vif_threshold: f64,
    pub n_trees: usize,
    pub target_count: usize,
}

impl Default for FeatureSelConfig {
    fn default() -> Self {
        FeatureSelConfig {
            corr_threshold: 0.9,
            vif_threshold: 10.0,
            n_trees: 200,
            target_count: 10,
        }
    }
}

impl FeatureSelConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.corr_threshold > 0.0 && self.corr_threshold <= 1.0) {
            return Err(Error::config("corr_threshold must be in (0, 1]"));
        }
        if self.vif_threshold <= 1.0 {
            return Err(Error::config("vif_threshold must exceed 1"));
        }
        if self.n_trees == 0 {
            return Err(Error::config("n_trees must be >= 1"));
        }
        if self.target_count == 0 {
            return Err(Error::config("target_count must be >= 1"));
        }
        Ok(())
    }
}

/// Sample Pearson coefficient. A constant series has no linear information,
/// so its correlation with anything is defined as 0 here.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::data(format!(
            "pearson: length mismatch {} vs {}",
            x.len(),
            y.len()
        )));
    }
    if x.len() < 2 {
        return Err(Error::data("pearson: need at least 2 points"));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (&a, &b) in x.iter().zip(y) {
        let dx = a - mx;
        let dy = b - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Ok(0.0);
    }
    Ok(sxy / (sxx.sqrt() * syy.sqrt()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationMatrix {
    pub names: Vec<String>,
    pub r: Matrix,
}

impl CorrelationMatrix {
    pub fn to_csv(&self, path: &std::path::Path) -> Result<()> {
        use std::fmt::Write;
        let mut out = String::from("feature");
        for n in &self.names {
            out.push(',');
            out.push_str(n);
        }
        out.push('\n');
        for i in 0..self.names.len() {
            out.push_str(&self.names[i]);
            for j in 0..self.names.len() {
                let _ = write!(out, ",{}", self.r.get(i, j));
            }
            out.push('\n');
        }
        std::fs::write(path, out)?;
        Ok(())
    }
}

/// Pairwise Pearson matrix over all table columns.
pub fn correlation_matrix(table: &TagTable) -> Result<CorrelationMatrix> {
    let k = table.n_cols();
    let cols: Vec<Vec<f64>> = (0..k).map(|c| table.values.col(c)).collect();
    let mut r = Matrix::zeros(k, k);
    for i in 0..k {
        let constant = cols[i].iter().all(|&v| v == cols[i][0]);
        r.set(i, i, if constant { 0.0 } else { 1.0 });
        for j in i + 1..k {
            let v = pearson(&cols[i], &cols[j])?;
            r.set(i, j, v);
            r.set(j, i, v);
        }
    }
    Ok(CorrelationMatrix {
        names: table.tag_names(),
        r,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Removal {
    pub name: String,
    pub reason: String,
}

/// Ties are broken by name so column order never changes the outcome: the
/// lexicographically smaller name is removed.
fn tie_drop<'a>(a: &'a str, b: &'a str) -> &'a str {
    if a <= b {
        a
    } else {
        b
    }
}

/// Stage 1. Repeatedly find the first pair with |r| > threshold (scanning in
/// column order) and drop its less label-informative member, until no pair
/// exceeds the threshold.
pub fn correlation_filter(
    table: &TagTable,
    labels: &[u8],
    threshold: f64,
) -> Result<(Vec<String>, Vec<Removal>)> {
    if labels.len() != table.n_rows() {
        return Err(Error::data("correlation_filter: labels length mismatch"));
    }
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(Error::config("corr threshold must be in (0, 1]"));
    }
    let y: Vec<f64> = labels.iter().map(|&v| v as f64).collect();
    let names = table.tag_names();
    let cols: Vec<Vec<f64>> = (0..table.n_cols()).map(|c| table.values.col(c)).collect();
    let pb: Vec<f64> = cols
        .iter()
        .map(|c| pearson(c, &y).map(f64::abs))
        .collect::<Result<_>>()?;

    let mut alive: Vec<usize> = (0..names.len()).collect();
    let mut removed = Vec::new();
    'outer: loop {
        for ai in 0..alive.len() {
            for bi in ai + 1..alive.len() {
                let (i, j) = (alive[ai], alive[bi]);
                let r = pearson(&cols[i], &cols[j])?;
                if r.abs() > threshold {
                    let drop_idx = if pb[i] < pb[j] {
                        i
                    } else if pb[j] < pb[i] {
                        j
                    } else if tie_drop(&names[i], &names[j]) == names[i] {
                        i
                    } else {
                        j
                    };
                    let keep_idx = if drop_idx == i { j } else { i };
                    removed.push(Removal {
                        name: names[drop_idx].clone(),
                        reason: format!(
                            "|r|={:.4} with {} exceeds {threshold}; |r_label|={:.4} vs {:.4}",
                            r.abs(),
                            names[keep_idx],
                            pb[drop_idx],
                            pb[keep_idx]
                        ),
                    });
                    alive.retain(|&x| x != drop_idx);
                    continue 'outer;
                }
            }
        }
        break;
    }
    Ok((alive.into_iter().map(|i| names[i].clone()).collect(), removed))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VifEntry {
    pub name: String,
    /// R² of this feature regressed on all the others; None for a constant
    /// column, which cannot be regressed.
    pub r2: Option<f64>,
    /// +∞ (serialized "inf") marks exact collinearity or a constant column.
    #[serde(with = "inf_f64")]
    pub vif: f64,
}

pub mod inf_f64 {
    //! JSON has no Infinity literal; the +∞ sentinel travels as the string
    //! "inf".
    use serde::{de, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
        if v.is_infinite() {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(*v)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Str(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(v),
            Raw::Str(s) if s == "inf" => Ok(f64::INFINITY),
            Raw::Str(s) => Err(de::Error::custom(format!("bad vif value: {s}"))),
        }
    }
}

pub type VifReport = Vec<VifEntry>;

/// R² of OLS (with intercept) of `y` on the columns of `x`, solved through an
/// SVD pseudo-inverse so exact collinearity degrades to R² = 1 instead of a
/// singular-matrix failure.
fn ols_r2(x_cols: &[&[f64]], y: &[f64]) -> f64 {
    let n = y.len();
    let k = x_cols.len() + 1;
    let mut design = nalgebra::DMatrix::<f64>::zeros(n, k);
    for r in 0..n {
        design[(r, 0)] = 1.0;
        for (c, col) in x_cols.iter().enumerate() {
            design[(r, c + 1)] = col[r];
        }
    }
    let rhs = nalgebra::DVector::<f64>::from_column_slice(y);
    let svd = design.clone().svd(true, true);
    let max_sv = svd.singular_values.iter().cloned().fold(0.0f64, f64::max);
    let tol = max_sv * (n.max(k) as f64) * f64::EPSILON;
    let beta = match svd.solve(&rhs, tol) {
        Ok(b) => b,
        Err(_) => return 1.0,
    };
    let fitted = design * beta;
    let my = y.iter().sum::<f64>() / n as f64;
    let mut ss_res = 0.0;
    let mut ss_tot = 0.0;
    for r in 0..n {
        ss_res += (y[r] - fitted[r]).powi(2);
        ss_tot += (y[r] - my).powi(2);
    }
    if ss_tot == 0.0 {
        return 1.0;
    }
    1.0 - ss_res / ss_tot
}

const R2_SINGULAR: f64 = 1.0 - 1e-12;

fn vif_over(cols: &[Vec<f64>], names: &[String]) -> VifReport {
    let k = cols.len();
    exec::par_map_indexed(k, |i| {
        let constant = cols[i].iter().all(|&v| v == cols[i][0]);
        if constant {
            return VifEntry {
                name: names[i].clone(),
                r2: None,
                vif: f64::INFINITY,
            };
        }
        let others: Vec<&[f64]> = (0..k).filter(|&j| j != i).map(|j| cols[j].as_slice()).collect();
        let r2 = ols_r2(&others, &cols[i]);
        let vif = if r2 >= R2_SINGULAR {
            f64::INFINITY
        } else {
            1.0 / (1.0 - r2)
        };
        VifEntry {
            name: names[i].clone(),
            r2: Some(r2),
            vif,
        }
    })
}

/// Variance inflation factors for every column of the table.
pub fn vif(table: &TagTable) -> Result<VifReport> {
    if table.n_cols() < 2 {
        return Err(Error::data("vif: need at least 2 features"));
    }
    if table.n_rows() <= table.n_cols() {
        return Err(Error::data(format!(
            "vif: need more rows ({}) than features ({})",
            table.n_rows(),
            table.n_cols()
        )));
    }
    let cols: Vec<Vec<f64>> = (0..table.n_cols()).map(|c| table.values.col(c)).collect();
    Ok(vif_over(&cols, &table.tag_names()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VifRound {
    pub round: usize,
    pub report: VifReport,
    pub removed: Option<String>,
}

/// Stage 2. Constant columns go in round 0; afterwards the single highest-VIF
/// feature is removed per round while any VIF exceeds the threshold.
/// Equality with the threshold is kept. Stops early rather than go below two
/// features.
pub fn vif_filter(
    table: &TagTable,
    threshold: f64,
) -> Result<(Vec<String>, Vec<VifRound>)> {
    if threshold <= 1.0 {
        return Err(Error::config("vif threshold must exceed 1"));
    }
    let names = table.tag_names();
    let mut alive: Vec<usize> = (0..names.len()).collect();
    let cols: Vec<Vec<f64>> = (0..table.n_cols()).map(|c| table.values.col(c)).collect();
    let mut trail = Vec::new();

    // Round 0: constant columns carry no variance to inflate and are removed
    // outright, recorded with an infinite sentinel.
    let constant: Vec<usize> = alive
        .iter()
        .copied()
        .filter(|&i| cols[i].iter().all(|&v| v == cols[i][0]))
        .collect();
    for &i in &constant {
        trail.push(VifRound {
            round: 0,
            report: vec![VifEntry {
                name: names[i].clone(),
                r2: None,
                vif: f64::INFINITY,
            }],
            removed: Some(names[i].clone()),
        });
        alive.retain(|&x| x != i);
    }

    let mut round = 1;
    loop {
        if alive.len() < 2 {
            break;
        }
        let sub_cols: Vec<Vec<f64>> = alive.iter().map(|&i| cols[i].clone()).collect();
        let sub_names: Vec<String> = alive.iter().map(|&i| names[i].clone()).collect();
        let report = vif_over(&sub_cols, &sub_names);
        let mut worst: Option<usize> = None;
        for (k, e) in report.iter().enumerate() {
            if e.vif > threshold {
                worst = match worst {
                    None => Some(k),
                    Some(w) => {
                        let better = e.vif > report[w].vif
                            || (e.vif == report[w].vif
                                && tie_drop(&e.name, &report[w].name) == e.name);
                        Some(if better { k } else { w })
                    }
                };
            }
        }
        match worst {
            None => {
                trail.push(VifRound {
                    round,
                    report,
                    removed: None,
                });
                break;
            }
            Some(k) => {
                if alive.len() == 2 {
                    log::warn!("vif_filter: stopping at 2 features with VIF still above threshold");
                    trail.push(VifRound {
                        round,
                        report,
                        removed: None,
                    });
                    break;
                }
                let victim = alive[k];
                trail.push(VifRound {
                    round,
                    report,
                    removed: Some(names[victim].clone()),
                });
                alive.remove(k);
                round += 1;
            }
        }
    }
    Ok((alive.into_iter().map(|i| names[i].clone()).collect(), trail))
}

// ---------------------------------------------------------------------------
// Random forest

#[derive(Debug, Clone, Serialize, Deserialize)]
enum Node {
    Leaf {
        /// Weighted fraction of class 1 at the leaf.
        p1: f64,
    },
    Split {
        feature: usize,
        threshold: f64,
        left: Box<Node>,
        right: Box<Node>,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Forest {
    trees: Vec<Node>,
    pub n_features: usize,
}

impl Forest {
    /// Mean of per-tree leaf probabilities for class 1.
    pub fn predict_proba(&self, row: &[f64]) -> f64 {
        let mut sum = 0.0;
        for t in &self.trees {
            let mut node = t;
            loop {
                match node {
                    Node::Leaf { p1 } => {
                        sum += p1;
                        break;
                    }
                    Node::Split {
                        feature,
                        threshold,
                        left,
                        right,
                    } => {
                        node = if row[*feature] <= *threshold { left } else { right };
                    }
                }
            }
        }
        sum / self.trees.len() as f64
    }

    pub fn predict(&self, row: &[f64]) -> u8 {
        u8::from(self.predict_proba(row) > 0.5)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceRanking {
    /// (name, importance), in input column order. Importances are total
    /// weighted Gini decrease per feature over every split in the forest,
    /// normalized to sum 1 when any split occurred.
    pub entries: Vec<(String, f64)>,
}

struct TreeBuilder<'a> {
    x: &'a Matrix,
    y: &'a [u8],
    class_weight: [f64; 2],
    max_features: usize,
    importances: Vec<f64>,
}

fn gini(w0: f64, w1: f64) -> f64 {
    let w = w0 + w1;
    if w <= 0.0 {
        return 0.0;
    }
    let p0 = w0 / w;
    let p1 = w1 / w;
    1.0 - p0 * p0 - p1 * p1
}

impl<'a> TreeBuilder<'a> {
    fn weights_of(&self, idx: &[usize]) -> (f64, f64) {
        let mut w = [0.0f64; 2];
        for &i in idx {
            w[self.y[i] as usize] += self.class_weight[self.y[i] as usize];
        }
        (w[0], w[1])
    }

    fn build(&mut self, idx: &mut Vec<usize>, rng: &mut rand_chacha::ChaCha8Rng) -> Node {
        let (w0, w1) = self.weights_of(idx);
        let node_gini = gini(w0, w1);
        if idx.len() < 2 || node_gini == 0.0 {
            return Node::Leaf {
                p1: if w0 + w1 > 0.0 { w1 / (w0 + w1) } else { 0.0 },
            };
        }

        // Candidate features: max_features sampled without replacement, in
        // draw order.
        let n_feat = self.x.cols();
        let mut pool: Vec<usize> = (0..n_feat).collect();
        let mut candidates = Vec::with_capacity(self.max_features);
        for _ in 0..self.max_features {
            let j = rng::uniform_index(rng, pool.len() as u64) as usize;
            candidates.push(pool.swap_remove(j));
        }

        let mut best: Option<(f64, usize, f64)> = None; // (decrease, feature, threshold)
        for &f in &candidates {
            let mut vals: Vec<(f64, u8)> =
                idx.iter().map(|&i| (self.x.get(i, f), self.y[i])).collect();
            vals.sort_by(|a, b| a.0.total_cmp(&b.0));
            let mut lw0 = 0.0;
            let mut lw1 = 0.0;
            for k in 0..vals.len() - 1 {
                let w = self.class_weight[vals[k].1 as usize];
                if vals[k].1 == 0 {
                    lw0 += w;
                } else {
                    lw1 += w;
                }
                if vals[k].0 == vals[k + 1].0 {
                    continue;
                }
                let rw0 = w0 - lw0;
                let rw1 = w1 - lw1;
                let wl = lw0 + lw1;
                let wr = rw0 + rw1;
                let wt = w0 + w1;
                let decrease =
                    wt * node_gini - wl * gini(lw0, lw1) - wr * gini(rw0, rw1);
                if decrease > best.map_or(1e-12, |b| b.0) {
                    let threshold = 0.5 * (vals[k].0 + vals[k + 1].0);
                    best = Some((decrease, f, threshold));
                }
            }
        }

        match best {
            None => Node::Leaf {
                p1: w1 / (w0 + w1),
            },
            Some((decrease, feature, threshold)) => {
                self.importances[feature] += decrease;
                let (mut left_idx, mut right_idx): (Vec<usize>, Vec<usize>) =
                    idx.iter().partition(|&&i| self.x.get(i, feature) <= threshold);
                let left = Box::new(self.build(&mut left_idx, rng));
                let right = Box::new(self.build(&mut right_idx, rng));
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                }
            }
        }
    }
}

/// Trains a bagged CART forest with balanced class weights
/// (w_c = N / (2 N_c), from the full input labels) and returns it with the
/// impurity-decrease importance ranking. Trees train in parallel when the
/// build allows it; per-tree seeds keep the result identical either way.
pub fn train_random_forest(
    x: &Matrix,
    y: &[u8],
    names: &[String],
    n_trees: usize,
    seed: Seed,
) -> Result<(Forest, ImportanceRanking)> {
    if x.rows() != y.len() {
        return Err(Error::data("forest: X rows and y length differ"));
    }
    if x.rows() < 2 {
        return Err(Error::data("forest: need at least 2 samples"));
    }
    if names.len() != x.cols() {
        return Err(Error::data("forest: names and X columns differ"));
    }
    let n = x.rows();
    let n1 = y.iter().filter(|&&v| v == 1).count();
    let n0 = n - n1;
    if n0 == 0 || n1 == 0 {
        return Err(Error::data("forest: both classes must be present"));
    }
    let class_weight = [n as f64 / (2.0 * n0 as f64), n as f64 / (2.0 * n1 as f64)];
    let max_features = ((x.cols() as f64).sqrt().floor() as usize).max(1);

    let per_tree: Vec<(Node, Vec<f64>)> = exec::par_map_indexed(n_trees, |t| {
        let mut rng = seed.derive_idx("tree", t as u64).rng();
        let mut idx: Vec<usize> = (0..n)
            .map(|_| rng::uniform_index(&mut rng, n as u64) as usize)
            .collect();
        let mut builder = TreeBuilder {
            x,
            y,
            class_weight,
            max_features,
            importances: vec![0.0; x.cols()],
        };
        let root = builder.build(&mut idx, &mut rng);
        (root, builder.importances)
    });

    let mut total = vec![0.0f64; x.cols()];
    let mut trees = Vec::with_capacity(n_trees);
    for (tree, imp) in per_tree {
        trees.push(tree);
        for (a, b) in total.iter_mut().zip(&imp) {
            *a += b;
        }
    }
    let sum: f64 = total.iter().sum();
    if sum > 0.0 {
        for v in &mut total {
            *v /= sum;
        }
    }
    let entries = names.iter().cloned().zip(total).collect();
    Ok((
        Forest {
            trees,
            n_features: x.cols(),
        },
        ImportanceRanking { entries },
    ))
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FeatureReport {
    pub stage1_removed: Vec<Removal>,
    pub stage2_removed: Vec<Removal>,
    pub stage3_removed: Vec<Removal>,
    /// Survivors, in input column order.
    pub selected: Vec<String>,
    pub target_count: usize,
}

/// Stage 3. Trains a forest, drops the single least important feature, and
/// repeats until `target` features remain. Tied importances drop the
/// lexicographically smaller name. Each round derives its own seed.
pub fn rfe(
    x: &Matrix,
    y: &[u8],
    names: &[String],
    target: usize,
    n_trees: usize,
    seed: Seed,
) -> Result<FeatureReport> {
    if target < 1 {
        return Err(Error::config("rfe: target must be >= 1"));
    }
    if target > names.len() {
        return Err(Error::config(format!(
            "rfe: target {} exceeds feature count {}",
            target,
            names.len()
        )));
    }
    let mut alive: Vec<usize> = (0..names.len()).collect();
    let mut stage3_removed = Vec::new();
    let mut round = 0u64;
    while alive.len() > target {
        let mut sub = Matrix::zeros(x.rows(), alive.len());
        for r in 0..x.rows() {
            for (c, &f) in alive.iter().enumerate() {
                sub.set(r, c, x.get(r, f));
            }
        }
        let sub_names: Vec<String> = alive.iter().map(|&f| names[f].clone()).collect();
        let (_, ranking) = train_random_forest(
            &sub,
            y,
            &sub_names,
            n_trees,
            seed.derive_idx("rfe_round", round),
        )?;
        let mut drop_k = 0usize;
        for k in 1..ranking.entries.len() {
            let (cn, cv) = (&ranking.entries[k].0, ranking.entries[k].1);
            let (bn, bv) = (&ranking.entries[drop_k].0, ranking.entries[drop_k].1);
            if cv < bv || (cv == bv && tie_drop(cn, bn) == cn.as_str()) {
                drop_k = k;
            }
        }
        stage3_removed.push(Removal {
            name: sub_names[drop_k].clone(),
            reason: format!(
                "lowest importance {:.6} in round {round}",
                ranking.entries[drop_k].1
            ),
        });
        alive.remove(drop_k);
        round += 1;
    }
    Ok(FeatureReport {
        stage1_removed: Vec::new(),
        stage2_removed: Vec::new(),
        stage3_removed,
        selected: alive.into_iter().map(|i| names[i].clone()).collect(),
        target_count: target,
    })
}

/// All three stages over a labeled table. The report's four lists partition
/// the input tag set.
pub fn select_features(
    table: &TagTable,
    labels: &[u8],
    cfg: &FeatureSelConfig,
    seed: Seed,
) -> Result<FeatureReport> {
    cfg.validate()?;
    let n_features = table.columns.len();
    if cfg.target_count > n_features {
        return Err(Error::config(format!(
            "feature selection: target {} exceeds the {} available features",
            cfg.target_count, n_features
        )));
    }
    // Keep-all request: the identity report, no stage runs.
    if cfg.target_count == n_features {
        return Ok(FeatureReport {
            stage1_removed: Vec::new(),
            stage2_removed: Vec::new(),
            stage3_removed: Vec::new(),
            selected: table.tag_names(),
            target_count: cfg.target_count,
        });
    }
    let (s1_names, stage1_removed) = correlation_filter(table, labels, cfg.corr_threshold)?;
    if s1_names.len() < 2 {
        return Err(Error::data(
            "feature selection: fewer than 2 features survived stage 1",
        ));
    }
    let s1_table = project(table, &s1_names);
    let (s2_names, trail) = vif_filter(&s1_table, cfg.vif_threshold)?;
    let stage2_removed: Vec<Removal> = trail
        .iter()
        .filter_map(|r| {
            r.removed.as_ref().map(|name| {
                let vif = r
                    .report
                    .iter()
                    .find(|e| &e.name == name)
                    .map(|e| e.vif)
                    .unwrap_or(f64::INFINITY);
                Removal {
                    name: name.clone(),
                    reason: if vif.is_infinite() {
                        format!("VIF infinite in round {}", r.round)
                    } else {
                        format!("VIF {:.3} in round {}", vif, r.round)
                    },
                }
            })
        })
        .collect();

    if s2_names.len() < cfg.target_count {
        return Err(Error::data(format!(
            "feature selection: {} features after stage 2, below target {}",
            s2_names.len(),
            cfg.target_count
        )));
    }
    let s2_table = project(table, &s2_names);
    let mut report = rfe(
        &s2_table.values,
        labels,
        &s2_names,
        cfg.target_count,
        cfg.n_trees,
        seed.derive("rfe"),
    )?;
    report.stage1_removed = stage1_removed;
    report.stage2_removed = stage2_removed;
    Ok(report)
}

/// Table restricted to `names`, keeping the table's own column order.
pub fn project(table: &TagTable, names: &[String]) -> TagTable {
    let keep: Vec<usize> = table
        .columns
        .iter()
        .enumerate()
        .filter(|(_, (n, _))| names.contains(n))
        .map(|(i, _)| i)
        .collect();
    let mut values = Matrix::zeros(table.n_rows(), keep.len());
    for r in 0..table.n_rows() {
        for (c, &i) in keep.iter().enumerate() {
            values.set(r, c, table.values.get(r, i));
        }
    }
    TagTable {
        timestamps: table.timestamps.clone(),
        columns: keep.iter().map(|&i| table.columns[i].clone()).collect(),
        values,
        labels: table.labels.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::Kind;

    fn table_from_cols(names: &[&str], cols: &[Vec<f64>]) -> TagTable {
        let n = cols[0].len();
        let mut values = Matrix::zeros(n, cols.len());
        for (c, col) in cols.iter().enumerate() {
            for (r, &v) in col.iter().enumerate() {
                values.set(r, c, v);
            }
        }
        TagTable {
            timestamps: (0..n).map(|i| i as f64).collect(),
            columns: names.iter().map(|&s| (s.to_string(), Kind::Analog)).collect(),
            values,
            labels: None,
        }
    }

    #[test]
    fn pearson_perfect_lines() {
        let up = pearson(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]).unwrap();
        let down = pearson(&[1.0, 2.0, 3.0], &[6.0, 4.0, 2.0]).unwrap();
        assert!((up - 1.0).abs() < 1e-12, "{up}");
        assert!((down + 1.0).abs() < 1e-12, "{down}");
    }

    #[test]
    fn pearson_known_value() {
        let r = pearson(&[1.0, 2.0, 3.0, 4.0], &[1.0, 3.0, 2.0, 4.0]).unwrap();
        assert!((r - 0.8).abs() < 1e-12, "{r}");
    }

    #[test]
    fn pearson_constant_series_is_zero() {
        assert_eq!(pearson(&[5.0; 4], &[1.0, 2.0, 3.0, 4.0]).unwrap(), 0.0);
    }

    #[test]
    fn pearson_rejects_bad_lengths() {
        assert!(pearson(&[1.0], &[1.0]).is_err());
        assert!(pearson(&[1.0, 2.0], &[1.0, 2.0, 3.0]).is_err());
    }

    #[test]
    fn pearson_symmetry_and_affine_props() {
        let x = [0.3, 1.7, 2.2, 4.8, 5.1, 6.0];
        let y = [2.0, 1.0, 3.5, 3.0, 5.5, 4.0];
        let rxy = pearson(&x, &y).unwrap();
        let ryx = pearson(&y, &x).unwrap();
        assert!((rxy - ryx).abs() < 1e-15);
        let ax: Vec<f64> = x.iter().map(|v| -2.5 * v + 7.0).collect();
        let raxy = pearson(&ax, &y).unwrap();
        assert!((raxy + rxy).abs() < 1e-12, "sign flip under negative scale");
    }

    #[test]
    fn correlation_filter_drops_duplicate_keeping_informative() {
        // b is an exact copy of a; c is the labels themselves, so a gets a
        // nonzero label correlation only through noise. Make a correlate
        // with labels more than b by making b a shuffled copy? Instead: a
        // equals labels (max informative), b = a exactly. Tie on |r_label|,
        // so lexicographic drop fires: a is kept only by its name... use
        // distinct informativeness instead.
        let labels: Vec<u8> = vec![0, 0, 0, 0, 1, 1, 1, 1];
        let a: Vec<f64> = labels.iter().map(|&v| v as f64).collect();
        let mut b = a.clone();
        b[0] = 0.001; // near-copy of a, slightly less clean against labels
        let noise: Vec<f64> = vec![0.9, -0.4, 0.2, 0.7, -0.8, 0.1, 0.5, -0.3];
        let t = table_from_cols(&["a", "b", "n"], &[a, b, noise]);
        let (alive, removed) = correlation_filter(&t, &labels, 0.9).unwrap();
        assert_eq!(alive, vec!["a".to_string(), "n".to_string()]);
        assert_eq!(removed.len(), 1);
        assert_eq!(removed[0].name, "b");
    }

    #[test]
    fn correlation_filter_no_op_below_threshold() {
        let labels = vec![0, 1, 0, 1, 0, 1];
        let t = table_from_cols(
            &["a", "b"],
            &[
                vec![1.0, -1.0, 2.0, -2.0, 0.5, 0.0],
                vec![0.0, 1.0, 1.0, 0.0, -1.0, 2.0],
            ],
        );
        let (alive, removed) = correlation_filter(&t, &labels, 0.9).unwrap();
        assert_eq!(alive.len(), 2);
        assert!(removed.is_empty());
    }

    #[test]
    fn vif_orthogonal_columns_are_one() {
        // Zero-mean orthogonal columns over 4 rows.
        let t = table_from_cols(
            &["a", "b"],
            &[
                vec![1.0, 1.0, -1.0, -1.0],
                vec![1.0, -1.0, 1.0, -1.0],
            ],
        );
        let rep = vif(&t).unwrap();
        for e in rep {
            assert!((e.vif - 1.0).abs() < 1e-9, "{:?}", e);
        }
    }

    #[test]
    fn vif_exact_dependency_is_infinite() {
        let a = vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let b = vec![2.0, 1.0, 4.0, 3.0, 6.0, 5.0];
        let c: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + y).collect();
        let t = table_from_cols(&["a", "b", "c"], &[a, b, c]);
        let rep = vif(&t).unwrap();
        assert!(rep.iter().all(|e| e.vif.is_infinite()), "{rep:?}");
    }

    #[test]
    fn vif_filter_removes_single_dependency() {
        let mut rng = Seed(3).rng();
        let n = 100;
        let a: Vec<f64> = (0..n).map(|_| rng::uniform_f64(&mut rng)).collect();
        let b: Vec<f64> = (0..n).map(|_| rng::uniform_f64(&mut rng)).collect();
        let c: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + y).collect();
        let d: Vec<f64> = (0..n).map(|_| rng::uniform_f64(&mut rng)).collect();
        let t = table_from_cols(&["a", "b", "c", "d"], &[a, b, c, d]);
        let (alive, trail) = vif_filter(&t, 10.0).unwrap();
        assert_eq!(alive.len(), 3);
        let removed: Vec<&str> = trail
            .iter()
            .filter_map(|r| r.removed.as_deref())
            .collect();
        assert_eq!(removed.len(), 1);
        // After removing any one of {a, b, c} the rest are independent.
        assert!(["a", "b", "c"].contains(&removed[0]));
        let last = trail.last().unwrap();
        assert!(last.report.iter().all(|e| e.vif <= 10.0));
    }

    #[test]
    fn vif_filter_keeps_independent_features() {
        let mut rng = Seed(4).rng();
        let cols: Vec<Vec<f64>> = (0..3)
            .map(|_| (0..50).map(|_| rng::uniform_f64(&mut rng)).collect())
            .collect();
        let t = table_from_cols(&["a", "b", "c"], &cols);
        let (alive, _) = vif_filter(&t, 10.0).unwrap();
        assert_eq!(alive.len(), 3);
    }

    #[test]
    fn vif_filter_removes_constant_in_round_zero() {
        let mut rng = Seed(5).rng();
        let a: Vec<f64> = (0..30).map(|_| rng::uniform_f64(&mut rng)).collect();
        let b: Vec<f64> = (0..30).map(|_| rng::uniform_f64(&mut rng)).collect();
        let k = vec![7.5; 30];
        let t = table_from_cols(&["a", "k", "b"], &[a, k, b]);
        let (alive, trail) = vif_filter(&t, 10.0).unwrap();
        assert_eq!(alive, vec!["a".to_string(), "b".to_string()]);
        assert_eq!(trail[0].round, 0);
        assert_eq!(trail[0].removed.as_deref(), Some("k"));
    }

    #[test]
    fn forest_finds_the_informative_feature() {
        let mut rng = Seed(11).rng();
        let n = 200;
        let mut x = Matrix::zeros(n, 4);
        let mut y = vec![0u8; n];
        for r in 0..n {
            let v = rng::uniform_f64(&mut rng);
            x.set(r, 0, v);
            y[r] = u8::from(v > 0.5);
            for c in 1..4 {
                x.set(r, c, rng::uniform_f64(&mut rng));
            }
        }
        let names: Vec<String> = ["inf", "n1", "n2", "n3"].iter().map(|s| s.to_string()).collect();
        let (_, ranking) = train_random_forest(&x, &y, &names, 50, Seed(1)).unwrap();
        let best = ranking
            .entries
            .iter()
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap();
        assert_eq!(best.0, "inf");
        let sum: f64 = ranking.entries.iter().map(|e| e.1).sum();
        assert!((sum - 1.0).abs() < 1e-9);
    }

    #[test]
    fn forest_duplicated_informative_columns_share_importance() {
        let mut rng = Seed(12).rng();
        let n = 300;
        let mut x = Matrix::zeros(n, 4);
        let mut y = vec![0u8; n];
        for r in 0..n {
            let v = rng::uniform_f64(&mut rng);
            x.set(r, 0, v);
            x.set(r, 1, v);
            y[r] = u8::from(v > 0.5);
            x.set(r, 2, rng::uniform_f64(&mut rng));
            x.set(r, 3, rng::uniform_f64(&mut rng));
        }
        let names: Vec<String> = ["a", "b", "n1", "n2"].iter().map(|s| s.to_string()).collect();
        let (_, ranking) = train_random_forest(&x, &y, &names, 60, Seed(2)).unwrap();
        let e: std::collections::BTreeMap<&str, f64> = ranking
            .entries
            .iter()
            .map(|(n, v)| (n.as_str(), *v))
            .collect();
        assert!(e["a"] > 0.0 && e["b"] > 0.0);
        assert!(e["a"] + e["b"] > e["n1"] + e["n2"]);
    }

    #[test]
    fn forest_rejects_single_class() {
        let x = Matrix::from_vec(4, 1, vec![1.0, 2.0, 3.0, 4.0]);
        let names = vec!["a".to_string()];
        assert!(train_random_forest(&x, &[1, 1, 1, 1], &names, 5, Seed(0)).is_err());
    }

    #[test]
    fn forest_is_deterministic() {
        let mut rng = Seed(13).rng();
        let n = 80;
        let mut x = Matrix::zeros(n, 3);
        let mut y = vec![0u8; n];
        for r in 0..n {
            for c in 0..3 {
                x.set(r, c, rng::uniform_f64(&mut rng));
            }
            y[r] = u8::from(x.get(r, 1) > 0.6);
        }
        let names: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
        let (_, r1) = train_random_forest(&x, &y, &names, 30, Seed(9)).unwrap();
        let (_, r2) = train_random_forest(&x, &y, &names, 30, Seed(9)).unwrap();
        assert_eq!(r1, r2);
    }

    #[test]
    fn rfe_round_count_and_identity() {
        let mut rng = Seed(21).rng();
        let n = 60;
        let k = 12;
        let mut x = Matrix::zeros(n, k);
        let mut y = vec![0u8; n];
        for r in 0..n {
            for c in 0..k {
                x.set(r, c, rng::uniform_f64(&mut rng));
            }
            y[r] = u8::from(x.get(r, 0) > 0.5);
        }
        let names: Vec<String> = (0..k).map(|i| format!("f{i:02}")).collect();
        let rep = rfe(&x, &y, &names, 10, 20, Seed(3)).unwrap();
        assert_eq!(rep.stage3_removed.len(), 2);
        assert_eq!(rep.selected.len(), 10);

        let rep_id = rfe(&x, &y, &names, k, 20, Seed(3)).unwrap();
        assert!(rep_id.stage3_removed.is_empty());
        assert_eq!(rep_id.selected, names);

        assert!(rfe(&x, &y, &names, k + 1, 20, Seed(3)).is_err());
    }

    #[test]
    fn report_partitions_input_tags() {
        let mut rng = Seed(30).rng();
        let n = 120;
        let labels: Vec<u8> = (0..n).map(|i| u8::from(i % 3 == 0)).collect();
        let y: Vec<f64> = labels.iter().map(|&v| v as f64).collect();
        let mut cols = Vec::new();
        let mut names = Vec::new();
        for i in 0..6 {
            let col: Vec<f64> = y
                .iter()
                .map(|&v| v * (i as f64 + 1.0) * 0.5 + rng::uniform_f64(&mut rng))
                .collect();
            cols.push(col);
            names.push(format!("s{i}"));
        }
        // Exact copy to exercise stage 1, and a constant for stage 2.
        cols.push(cols[0].clone());
        names.push("copy0".to_string());
        cols.push(vec![3.3; n]);
        names.push("const".to_string());
        let name_refs: Vec<&str> = names.iter().map(|s| s.as_str()).collect();
        let t = table_from_cols(&name_refs, &cols);
        let cfg = FeatureSelConfig {
            target_count: 4,
            n_trees: 15,
            ..Default::default()
        };
        let rep = select_features(&t, &labels, &cfg, Seed(77)).unwrap();
        let mut all: Vec<String> = rep
            .stage1_removed
            .iter()
            .chain(&rep.stage2_removed)
            .chain(&rep.stage3_removed)
            .map(|r| r.name.clone())
            .chain(rep.selected.iter().cloned())
            .collect();
        all.sort();
        let mut expect = names.clone();
        expect.sort();
        assert_eq!(all, expect);
        assert_eq!(rep.selected.len(), cfg.target_count);
        assert!(rep.stage1_removed.iter().any(|r| r.name == "copy0"));
        assert!(rep.stage2_removed.iter().any(|r| r.name == "const"));
    }

    #[test]
    fn vif_entry_inf_round_trips_in_json() {
        let e = VifEntry {
            name: "x".into(),
            r2: None,
            vif: f64::INFINITY,
        };
        let s = serde_json::to_string(&e).unwrap();
        assert!(s.contains("\"inf\""));
        let back: VifEntry = serde_json::from_str(&s).unwrap();
        assert!(back.vif.is_infinite());
        let f = VifEntry {
            name: "y".into(),
            r2: Some(0.5),
            vif: 2.0,
        };
        let back2: VifEntry = serde_json::from_str(&serde_json::to_string(&f).unwrap()).unwrap();
        assert_eq!(back2.vif, 2.0);
    }
}
