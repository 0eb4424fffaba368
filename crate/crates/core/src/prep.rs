//! Training-set preparation: stratified split, standardization, SMOTE
//! balancing, seeded shuffling, sliding windows, and chunk descriptors.
//!
//! Ordering rules that matter here:
//! - the scaler is fitted on training rows only,
//! - SMOTE sees the training partition only,
//! - windows never span the train/validation boundary (each partition is
//!   windowed independently),
//! - in the default mode the SMOTE/shuffle unit is the flattened
//!   (window, target) pair, so temporal order inside every window survives;
//!   `rows` mode balances and shuffles raw rows before windowing instead.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec;
use crate::matrix::Matrix;
use crate::rng::{self, Seed};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitIndices {
    /// Sorted ascending; windows built over a partition keep temporal order.
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub seed: Seed,
}

/// Per-class seeded permutation, then round(ratio * class_size) rows to
/// train (half away from zero), rest to validation.
pub fn stratified_split(labels: &[u8], ratio: f64, seed: Seed) -> Result<SplitIndices> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::config(format!("split ratio {ratio} not in (0, 1)")));
    }
    let mut train = Vec::new();
    let mut validation = Vec::new();
    for class in [0u8, 1u8] {
        let members: Vec<usize> = labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| l == class)
            .map(|(i, _)| i)
            .collect();
        if members.len() < 2 {
            return Err(Error::data(format!(
                "stratified split: class {class} has {} samples, need at least 2",
                members.len()
            )));
        }
        let mut perm = members;
        rng::shuffle(&mut perm, &mut seed.derive_idx("split_class", class as u64).rng());
        let n_train = (ratio * perm.len() as f64).round() as usize;
        train.extend_from_slice(&perm[..n_train]);
        validation.extend_from_slice(&perm[n_train..]);
    }
    train.sort_unstable();
    validation.sort_unstable();
    Ok(SplitIndices {
        train,
        validation,
        seed,
    })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ScalerParams {
    pub mean: Vec<f64>,
    /// Population std (n divisor); constant columns store 1 so the transform
    /// maps them to zeros.
    pub std: Vec<f64>,
}

pub fn fit_scaler(x: &Matrix) -> Result<ScalerParams> {
    if x.rows() == 0 || x.cols() == 0 {
        return Err(Error::data("fit_scaler: empty matrix"));
    }
    let n = x.rows() as f64;
    let mut mean = vec![0.0; x.cols()];
    let mut std = vec![0.0; x.cols()];
    for c in 0..x.cols() {
        let m = (0..x.rows()).map(|r| x.get(r, c)).sum::<f64>() / n;
        let var = (0..x.rows()).map(|r| (x.get(r, c) - m).powi(2)).sum::<f64>() / n;
        mean[c] = m;
        std[c] = if var == 0.0 { 1.0 } else { var.sqrt() };
    }
    Ok(ScalerParams { mean, std })
}

pub fn apply_scaler(x: &Matrix, p: &ScalerParams) -> Result<Matrix> {
    if x.cols() != p.mean.len() {
        return Err(Error::data(format!(
            "apply_scaler: {} columns vs {} scaler entries",
            x.cols(),
            p.mean.len()
        )));
    }
    let mut out = x.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        for c in 0..row.len() {
            row[c] = (row[c] - p.mean[c]) / p.std[c];
        }
    }
    Ok(out)
}

pub fn invert_scaler(x: &Matrix, p: &ScalerParams) -> Result<Matrix> {
    if x.cols() != p.mean.len() {
        return Err(Error::data("invert_scaler: column count mismatch"));
    }
    let mut out = x.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        for c in 0..row.len() {
            row[c] = row[c] * p.std[c] + p.mean[c];
        }
    }
    Ok(out)
}

/// k nearest minority neighbors of every minority row, by Euclidean
/// distance, ties broken by row index. Rows computed independently, so the
/// parallel build matches the sequential one exactly.
fn knn_indices(minority: &Matrix, k: usize) -> Vec<Vec<usize>> {
    let m = minority.rows();
    exec::par_map_indexed(m, |i| {
        let a = minority.row(i);
        // Streaming best-k selection ordered by (distance, index), identical
        // to sorting the full distance list. Scratch stays O(k); a
        // per-point buffer of all m distances fragments the allocator arena
        // at large minority counts.
        let mut best: Vec<(f64, usize)> = Vec::with_capacity(k + 1);
        for j in 0..m {
            if j == i {
                continue;
            }
            let b = minority.row(j);
            let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
            let pos = best
                .partition_point(|&(dp, jp)| dp.total_cmp(&d2).then(jp.cmp(&j)).is_lt());
            if pos < k {
                best.insert(pos, (d2, j));
                best.truncate(k);
            }
        }
        best.into_iter().map(|(_, j)| j).collect()
    })
}

/// Interpolates `count` synthetic rows from the minority sample matrix:
/// x_new = x_i + u (x_nn - x_i), u ~ U(0,1), base row and neighbor drawn
/// from the seeded stream.
pub fn smote_synthesize(
    minority: &Matrix,
    k: usize,
    count: usize,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> Result<Matrix> {
    let m = minority.rows();
    if m < 2 {
        return Err(Error::data(format!(
            "smote: minority class has {m} sample(s), need at least 2"
        )));
    }
    let k_eff = k.min(m - 1).max(1);
    let neighbors = knn_indices(minority, k_eff);
    let dim = minority.cols();
    let mut out = Matrix::zeros(count, dim);
    for s in 0..count {
        let i = rng::uniform_index(rng, m as u64) as usize;
        let nn = neighbors[i][rng::uniform_index(rng, k_eff as u64) as usize];
        let u = rng::uniform_f64(rng);
        let xi = minority.row(i);
        let xn = minority.row(nn);
        let row = out.row_mut(s);
        for c in 0..dim {
            row[c] = xi[c] + u * (xn[c] - xi[c]);
        }
    }
    Ok(out)
}

/// Row-mode SMOTE: balances classes by appending synthetic minority rows
/// after the originals.
pub fn smote(x: &Matrix, y: &[u8], k: usize, seed: Seed) -> Result<(Matrix, Vec<u8>)> {
    if x.rows() != y.len() {
        return Err(Error::data("smote: X rows and y length differ"));
    }
    let n1 = y.iter().filter(|&&v| v == 1).count();
    let n0 = y.len() - n1;
    if n0 == n1 {
        return Ok((x.clone(), y.to_vec()));
    }
    let (minority_label, n_min, n_maj) = if n1 < n0 { (1u8, n1, n0) } else { (0u8, n0, n1) };
    let mut minority = Matrix::zeros(n_min, x.cols());
    let mut mi = 0;
    for r in 0..x.rows() {
        if y[r] == minority_label {
            minority.row_mut(mi).copy_from_slice(x.row(r));
            mi += 1;
        }
    }
    let mut rng = seed.derive("smote").rng();
    let synth = smote_synthesize(&minority, k, n_maj - n_min, &mut rng)?;

    let mut out = Matrix::zeros(x.rows() + synth.rows(), x.cols());
    for r in 0..x.rows() {
        out.row_mut(r).copy_from_slice(x.row(r));
    }
    for s in 0..synth.rows() {
        out.row_mut(x.rows() + s).copy_from_slice(synth.row(s));
    }
    let mut y_out = y.to_vec();
    y_out.extend(std::iter::repeat(minority_label).take(synth.rows()));
    Ok((out, y_out))
}

/// Joint seeded permutation of rows and labels.
pub fn shuffle_xy(x: &Matrix, y: &[u8], seed: Seed) -> Result<(Matrix, Vec<u8>)> {
    if x.rows() != y.len() {
        return Err(Error::data("shuffle: X rows and y length differ"));
    }
    let mut order: Vec<usize> = (0..x.rows()).collect();
    rng::shuffle(&mut order, &mut seed.derive("shuffle").rng());
    let mut xo = Matrix::zeros(x.rows(), x.cols());
    let mut yo = vec![0u8; y.len()];
    for (dst, &src) in order.iter().enumerate() {
        xo.row_mut(dst).copy_from_slice(x.row(src));
        yo[dst] = y[src];
    }
    Ok((xo, yo))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SequenceBatch {
    /// One flattened window per row: w consecutive input rows, time-major.
    pub windows: Matrix,
    pub targets: Vec<u8>,
    pub w: usize,
    pub n_features: usize,
}

/// Stride-1 overlapping windows; window j covers rows [j, j+w) and takes the
/// label of its final row.
pub fn build_windows(x: &Matrix, y: &[u8], w: usize) -> Result<SequenceBatch> {
    if w < 1 {
        return Err(Error::config("window length must be >= 1"));
    }
    if x.rows() != y.len() {
        return Err(Error::data("build_windows: X rows and y length differ"));
    }
    if x.rows() < w {
        return Err(Error::data(format!(
            "build_windows: {} rows < window length {w}",
            x.rows()
        )));
    }
    let count = x.rows() - w + 1;
    let n = x.cols();
    let mut windows = Matrix::zeros(count, w * n);
    let mut targets = vec![0u8; count];
    for j in 0..count {
        let row = windows.row_mut(j);
        for t in 0..w {
            row[t * n..(t + 1) * n].copy_from_slice(x.row(j + t));
        }
        targets[j] = y[j + w - 1];
    }
    Ok(SequenceBatch {
        windows,
        targets,
        w,
        n_features: n,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChunkSpec {
    pub index: usize,
    pub start: usize,
    pub len: usize,
}

/// Consecutive non-overlapping runs of `c` windows; the final chunk may be
/// short. Descriptors only; materialization is the consumer's choice.
pub fn chunks(total: usize, c: usize) -> Vec<ChunkSpec> {
    assert!(c >= 1, "chunk size must be >= 1");
    let mut out = Vec::new();
    let mut start = 0;
    let mut index = 0;
    while start < total {
        let len = c.min(total - start);
        out.push(ChunkSpec { index, start, len });
        start += len;
        index += 1;
    }
    out
}

/// A window either references `w` consecutive rows of the real matrix or one
/// row of the synthetic pool. Keeping references instead of copies is what
/// lets training materialize one chunk at a time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum WindowRef {
    Real { start: u32 },
    Synth { idx: u32 },
}

/// Training windows after balancing and shuffling, stored as references plus
/// the synthetic pool.
#[derive(Debug, Clone)]
pub struct TrainWindows {
    pub x_rows: Matrix,
    pub y_rows: Vec<u8>,
    pub w: usize,
    pub synth: Matrix,
    pub synth_targets: Vec<u8>,
    /// Shuffled presentation order over real and synthetic windows.
    pub order: Vec<WindowRef>,
}

impl TrainWindows {
    pub fn n_windows(&self) -> usize {
        self.order.len()
    }

    pub fn dim(&self) -> usize {
        self.w * self.x_rows.cols()
    }

    pub fn target_of(&self, r: WindowRef) -> u8 {
        match r {
            WindowRef::Real { start } => self.y_rows[start as usize + self.w - 1],
            WindowRef::Synth { idx } => self.synth_targets[idx as usize],
        }
    }

    /// Copies windows [start, start+len) of the presentation order into a
    /// dense buffer. The only full-window allocation in the training path.
    pub fn materialize(&self, start: usize, len: usize) -> (Matrix, Vec<u8>) {
        let n = self.x_rows.cols();
        let mut x = Matrix::zeros(len, self.dim());
        let mut y = vec![0u8; len];
        for (k, &r) in self.order[start..start + len].iter().enumerate() {
            let row = x.row_mut(k);
            match r {
                WindowRef::Real { start: s } => {
                    for t in 0..self.w {
                        row[t * n..(t + 1) * n].copy_from_slice(self.x_rows.row(s as usize + t));
                    }
                }
                WindowRef::Synth { idx } => {
                    row.copy_from_slice(self.synth.row(idx as usize));
                }
            }
            y[k] = self.target_of(r);
        }
        (x, y)
    }

    pub fn class_counts(&self) -> (usize, usize) {
        let n1 = self
            .order
            .iter()
            .filter(|&&r| self.target_of(r) == 1)
            .count();
        (self.order.len() - n1, n1)
    }
}

/// Builds the balanced, shuffled training window set in `windows` mode:
/// window targets are computed in place, minority windows are materialized
/// transiently for SMOTE, and the final order holds references only.
pub fn train_windows_smote(
    x_rows: Matrix,
    y_rows: Vec<u8>,
    w: usize,
    k: usize,
    seed: Seed,
) -> Result<TrainWindows> {
    if x_rows.rows() < w {
        return Err(Error::data(format!(
            "train windows: {} rows < window length {w}",
            x_rows.rows()
        )));
    }
    let count = x_rows.rows() - w + 1;
    let n = x_rows.cols();
    let targets: Vec<u8> = (0..count).map(|j| y_rows[j + w - 1]).collect();
    let n1 = targets.iter().filter(|&&t| t == 1).count();
    let n0 = count - n1;

    let (synth, synth_targets) = if n0 == n1 {
        (Matrix::zeros(0, w * n), Vec::new())
    } else {
        let (minority_label, n_min, n_maj) = if n1 < n0 { (1u8, n1, n0) } else { (0u8, n0, n1) };
        let mut minority = Matrix::zeros(n_min, w * n);
        let mut mi = 0;
        for j in 0..count {
            if targets[j] == minority_label {
                let row = minority.row_mut(mi);
                for t in 0..w {
                    row[t * n..(t + 1) * n].copy_from_slice(x_rows.row(j + t));
                }
                mi += 1;
            }
        }
        let mut rng = seed.derive("smote").rng();
        let synth = smote_synthesize(&minority, k, n_maj - n_min, &mut rng)?;
        let m = synth.rows();
        (synth, vec![minority_label; m])
    };

    let mut order: Vec<WindowRef> = (0..count)
        .map(|j| WindowRef::Real { start: j as u32 })
        .collect();
    order.extend((0..synth.rows()).map(|i| WindowRef::Synth { idx: i as u32 }));
    rng::shuffle(&mut order, &mut seed.derive("shuffle").rng());

    Ok(TrainWindows {
        x_rows,
        y_rows,
        w,
        synth,
        synth_targets,
        order,
    })
}

/// `rows` mode: SMOTE on raw rows, joint row shuffle, then windows over the
/// shuffled sequence. Windows then mix non-adjacent timestamps, which is
/// why `windows` mode is the default.
pub fn train_windows_rows_mode(
    x_rows: &Matrix,
    y_rows: &[u8],
    w: usize,
    k: usize,
    seed: Seed,
) -> Result<TrainWindows> {
    let (xb, yb) = smote(x_rows, y_rows, k, seed)?;
    let (xs, ys) = shuffle_xy(&xb, &yb, seed)?;
    if xs.rows() < w {
        return Err(Error::data(format!(
            "train windows: {} rows < window length {w}",
            xs.rows()
        )));
    }
    let count = xs.rows() - w + 1;
    let order: Vec<WindowRef> = (0..count)
        .map(|j| WindowRef::Real { start: j as u32 })
        .collect();
    Ok(TrainWindows {
        x_rows: xs,
        y_rows: ys,
        w,
        synth: Matrix::zeros(0, w * x_rows.cols()),
        synth_targets: Vec::new(),
        order,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_proportions_match_example() {
        let labels: Vec<u8> = (0..100).map(|i| u8::from(i < 30)).collect();
        let s = stratified_split(&labels, 0.7, Seed(1)).unwrap();
        assert_eq!(s.train.len(), 70);
        assert_eq!(s.validation.len(), 30);
        let train_pos = s.train.iter().filter(|&&i| labels[i] == 1).count();
        assert_eq!(train_pos, 21);
    }

    #[test]
    fn split_is_deterministic_and_partitions() {
        let labels: Vec<u8> = (0..50).map(|i| u8::from(i % 4 == 0)).collect();
        let a = stratified_split(&labels, 0.7, Seed(9)).unwrap();
        let b = stratified_split(&labels, 0.7, Seed(9)).unwrap();
        assert_eq!(a, b);
        let mut all: Vec<usize> = a.train.iter().chain(&a.validation).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..50).collect::<Vec<_>>());
    }

    #[test]
    fn split_rounds_half_away_from_zero() {
        let labels: Vec<u8> = vec![1, 1, 1, 0, 0, 0, 0, 0, 0, 0];
        let s = stratified_split(&labels, 0.7, Seed(2)).unwrap();
        let train_pos = s.train.iter().filter(|&&i| labels[i] == 1).count();
        assert_eq!(train_pos, 2, "round(0.7 * 3) = 2");
        let train_neg = s.train.len() - train_pos;
        assert_eq!(train_neg, 5, "round(0.7 * 7) = 5");
    }

    #[test]
    fn split_rejects_tiny_class_and_bad_ratio() {
        let labels = vec![0, 0, 0, 1];
        assert!(stratified_split(&labels, 0.7, Seed(0)).is_err());
        let ok = vec![0, 0, 1, 1];
        assert!(stratified_split(&ok, 0.0, Seed(0)).is_err());
        assert!(stratified_split(&ok, 1.0, Seed(0)).is_err());
    }

    #[test]
    fn split_stratification_bound() {
        let labels: Vec<u8> = (0..997).map(|i| u8::from(i % 3 == 0)).collect();
        let s = stratified_split(&labels, 0.7, Seed(5)).unwrap();
        let global = labels.iter().filter(|&&l| l == 1).count() as f64 / labels.len() as f64;
        let tp = s.train.iter().filter(|&&i| labels[i] == 1).count() as f64;
        let frac = tp / s.train.len() as f64;
        assert!(
            (frac - global).abs() <= 1.0 / s.train.len() as f64,
            "{frac} vs {global}"
        );
    }

    #[test]
    fn scaler_matches_hand_arithmetic() {
        let x = Matrix::from_vec(3, 1, vec![2.0, 4.0, 6.0]);
        let p = fit_scaler(&x).unwrap();
        assert_eq!(p.mean[0], 4.0);
        assert!((p.std[0] - (8.0f64 / 3.0).sqrt()).abs() < 1e-15);
        let t = apply_scaler(&x, &p).unwrap();
        assert!((t.get(0, 0) + 1.224744871391589).abs() < 1e-12);
        assert!(t.get(1, 0).abs() < 1e-15);
        assert!((t.get(2, 0) - 1.224744871391589).abs() < 1e-12);
    }

    #[test]
    fn scaler_constant_column_maps_to_zero() {
        let x = Matrix::from_vec(3, 1, vec![5.0, 5.0, 5.0]);
        let p = fit_scaler(&x).unwrap();
        assert_eq!(p.std[0], 1.0);
        let t = apply_scaler(&x, &p).unwrap();
        assert_eq!(t.data(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn scaler_round_trips() {
        let mut rng = Seed(3).rng();
        let x = Matrix::from_vec(20, 3, (0..60).map(|_| rng::uniform_f64(&mut rng) * 9.0).collect());
        let p = fit_scaler(&x).unwrap();
        let t = apply_scaler(&x, &p).unwrap();
        let back = invert_scaler(&t, &p).unwrap();
        for (a, b) in back.data().iter().zip(x.data()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn scaler_rejects_empty() {
        assert!(fit_scaler(&Matrix::zeros(0, 3)).is_err());
    }

    #[test]
    fn smote_balances_counts() {
        let mut rng = Seed(4).rng();
        let n = 140;
        let x = Matrix::from_vec(n, 2, (0..n * 2).map(|_| rng::uniform_f64(&mut rng)).collect());
        let y: Vec<u8> = (0..n).map(|i| u8::from(i < 40)).collect();
        let (xb, yb) = smote(&x, &y, 5, Seed(7)).unwrap();
        let n1 = yb.iter().filter(|&&v| v == 1).count();
        assert_eq!(n1, 100);
        assert_eq!(yb.len(), 200);
        assert_eq!(xb.rows(), 200);
        // Originals untouched, synthetics appended after them.
        assert_eq!(&xb.data()[..n * 2], x.data());
        assert_eq!(&yb[..n], &y[..]);
    }

    #[test]
    fn smote_interpolates_on_the_segment() {
        // Minority {(0,0), (1,1)}: every synthetic point has equal
        // coordinates in [0, 1].
        let x = Matrix::from_vec(
            5,
            2,
            vec![0.0, 0.0, 1.0, 1.0, 4.0, 4.0, 5.0, 5.0, 6.0, 6.0],
        );
        let y = vec![1, 1, 0, 0, 0];
        let (xb, yb) = smote(&x, &y, 1, Seed(11)).unwrap();
        assert_eq!(yb.iter().filter(|&&v| v == 1).count(), 3);
        let s = xb.row(5);
        assert!((s[0] - s[1]).abs() < 1e-12);
        assert!((0.0..=1.0).contains(&s[0]));
    }

    #[test]
    fn smote_deterministic_and_errors() {
        let x = Matrix::from_vec(4, 1, vec![0.0, 1.0, 5.0, 6.0]);
        let y = vec![1, 1, 0, 0];
        // Balanced input is a no-op.
        let (xb, yb) = smote(&x, &y, 5, Seed(1)).unwrap();
        assert_eq!(xb, x);
        assert_eq!(yb, y);

        let x2 = Matrix::from_vec(4, 1, vec![0.0, 5.0, 6.0, 7.0]);
        let y2 = vec![1, 0, 0, 0];
        assert!(smote(&x2, &y2, 5, Seed(1)).is_err(), "single minority row");

        let x3 = Matrix::from_vec(5, 1, vec![0.0, 1.0, 5.0, 6.0, 7.0]);
        let y3 = vec![1, 1, 0, 0, 0];
        let a = smote(&x3, &y3, 5, Seed(2)).unwrap();
        let b = smote(&x3, &y3, 5, Seed(2)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn shuffle_is_joint_permutation() {
        let x = Matrix::from_vec(4, 1, vec![10.0, 20.0, 30.0, 40.0]);
        let y = vec![1, 2, 3, 4u8];
        let (xs, ys) = shuffle_xy(&x, &y, Seed(5)).unwrap();
        for r in 0..4 {
            assert_eq!(xs.get(r, 0) as u8 / 10, ys[r], "rows and labels moved together");
        }
        let mut vals: Vec<f64> = (0..4).map(|r| xs.get(r, 0)).collect();
        vals.sort_by(f64::total_cmp);
        assert_eq!(vals, vec![10.0, 20.0, 30.0, 40.0]);

        let one = Matrix::from_vec(1, 1, vec![9.0]);
        let (o, _) = shuffle_xy(&one, &[1], Seed(5)).unwrap();
        assert_eq!(o, one);
    }

    #[test]
    fn windows_count_and_targets() {
        let x = Matrix::from_vec(12, 1, (0..12).map(|i| i as f64).collect());
        let y: Vec<u8> = (0..12).map(|i| u8::from(i >= 6)).collect();
        let b = build_windows(&x, &y, 5).unwrap();
        assert_eq!(b.windows.rows(), 8);
        assert_eq!(b.targets.len(), 8);
        // Window j ends at row j+4; target is that row's label.
        for j in 0..8 {
            assert_eq!(b.targets[j], y[j + 4]);
        }
        assert_eq!(b.windows.row(0), &[0.0, 1.0, 2.0, 3.0, 4.0]);

        let w1 = build_windows(&x, &y, 1).unwrap();
        assert_eq!(w1.targets, y);

        assert!(build_windows(&x, &y, 13).is_err());
    }

    #[test]
    fn windows_final_timestamp_rule() {
        let x = Matrix::from_vec(5, 1, vec![0.0, 0.0, 0.0, 0.0, 9.0]);
        let y = vec![0, 0, 0, 0, 1];
        let b = build_windows(&x, &y, 5).unwrap();
        assert_eq!(b.windows.rows(), 1);
        assert_eq!(b.targets, vec![1]);
    }

    #[test]
    fn chunk_descriptors_cover_exactly() {
        let specs = chunks(2500, 1000);
        let lens: Vec<usize> = specs.iter().map(|s| s.len).collect();
        assert_eq!(lens, vec![1000, 1000, 500]);
        assert_eq!(specs[2].start, 2000);

        assert_eq!(chunks(10, 100).len(), 1);
        assert!(chunks(0, 5).is_empty());

        let again = chunks(2500, 1000);
        assert_eq!(specs, again);
    }

    #[test]
    fn train_windows_smote_balances_and_reconstructs() {
        let mut rng = Seed(8).rng();
        let n = 60;
        let x = Matrix::from_vec(n, 2, (0..n * 2).map(|_| rng::uniform_f64(&mut rng)).collect());
        let y: Vec<u8> = (0..n).map(|i| u8::from(i % 5 == 0)).collect();
        let tw = train_windows_smote(x.clone(), y.clone(), 4, 5, Seed(3)).unwrap();
        let (c0, c1) = tw.class_counts();
        assert_eq!(c0, c1, "exact balance over window targets");

        // Concatenating materialized chunks reconstructs the whole set.
        let full = tw.materialize(0, tw.n_windows());
        let mut parts: Vec<(Matrix, Vec<u8>)> = Vec::new();
        for spec in chunks(tw.n_windows(), 7) {
            parts.push(tw.materialize(spec.start, spec.len));
        }
        let mut rebuilt_rows = 0;
        for (px, py) in &parts {
            for r in 0..px.rows() {
                assert_eq!(px.row(r), full.0.row(rebuilt_rows));
                assert_eq!(py[r], full.1[rebuilt_rows]);
                rebuilt_rows += 1;
            }
        }
        assert_eq!(rebuilt_rows, tw.n_windows());

        // Real windows carry temporally ordered rows from the source.
        let real_pos = tw
            .order
            .iter()
            .position(|r| matches!(r, WindowRef::Real { .. }))
            .unwrap();
        if let WindowRef::Real { start } = tw.order[real_pos] {
            let (mx, _) = tw.materialize(real_pos, 1);
            assert_eq!(&mx.row(0)[..2], x.row(start as usize));
            assert_eq!(&mx.row(0)[2..4], x.row(start as usize + 1));
        }
    }

    #[test]
    fn train_windows_rows_mode_runs() {
        let mut rng = Seed(9).rng();
        let n = 40;
        let x = Matrix::from_vec(n, 2, (0..n * 2).map(|_| rng::uniform_f64(&mut rng)).collect());
        let y: Vec<u8> = (0..n).map(|i| u8::from(i % 4 == 0)).collect();
        let tw = train_windows_rows_mode(&x, &y, 5, 5, Seed(3)).unwrap();
        assert_eq!(tw.x_rows.rows(), 60, "rows balanced to 30/30");
        assert_eq!(tw.n_windows(), 60 - 5 + 1);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn window_multiset_preserves_labels(n in 5usize..40, seed in 0u64..500) {
                let mut rng = Seed(seed).rng();
                let x = Matrix::from_vec(n, 1, (0..n).map(|_| rng::uniform_f64(&mut rng)).collect());
                let y: Vec<u8> = (0..n).map(|_| (rng::uniform_index(&mut rng, 2)) as u8).collect();
                let b = build_windows(&x, &y, 1).unwrap();
                prop_assert_eq!(b.targets, y);
            }

            #[test]
            fn chunks_partition(total in 0usize..5000, c in 1usize..600) {
                let specs = chunks(total, c);
                let mut cursor = 0;
                for (i, s) in specs.iter().enumerate() {
                    prop_assert_eq!(s.index, i);
                    prop_assert_eq!(s.start, cursor);
                    prop_assert!(s.len >= 1 && s.len <= c);
                    cursor += s.len;
                }
                prop_assert_eq!(cursor, total);
            }

            #[test]
            fn split_partitions_and_bounds(n in 10usize..300, frac in 1usize..9, seed in 0u64..200) {
                let labels: Vec<u8> = (0..n).map(|i| u8::from(i % 3 == 0)).collect();
                let ratio = frac as f64 / 10.0;
                let s = stratified_split(&labels, ratio, Seed(seed)).unwrap();
                let mut all: Vec<usize> = s.train.iter().chain(&s.validation).copied().collect();
                all.sort_unstable();
                prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
                for c in [0u8, 1] {
                    let nc = labels.iter().filter(|&&l| l == c).count();
                    let tc = s.train.iter().filter(|&&i| labels[i] == c).count();
                    let expect = (ratio * nc as f64).round() as usize;
                    prop_assert_eq!(tc, expect);
                }
            }
        }
    }
}
