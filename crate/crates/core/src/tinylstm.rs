//! The detection model: a single LSTM layer with a sigmoid readout, written
//! as plain loops.
//!
//! Gate equations, per step, with split input/recurrent weight blocks
//! (algebraically identical to the concatenated [h, x] form):
//!
//!   f = sigma(Wxf x + Whf h + bf)        forget
//!   i = sigma(Wxi x + Whi h + bi)        input
//!   o = sigma(Wxo x + Who h + bo)        output
//!   g = tanh (Wxc x + Whc h + bc)        candidate
//!   c' = f * c + i * g
//!   h' = o * tanh(c')
//!
//! The readout maps the final hidden state to a probability via a dense
//! layer and a sigmoid. Training gradients come from full backprop through
//! time; `backward` is checked against central finite differences in the
//! test suite.

use rand_distr::Distribution;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec;
use crate::matrix::Matrix;
use crate::rng::Seed;

pub const BCE_CLAMP: f64 = 1e-7;

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmParams {
    pub n_features: usize,
    pub units: usize,
    pub wx_f: Matrix,
    pub wh_f: Matrix,
    pub b_f: Vec<f64>,
    pub wx_i: Matrix,
    pub wh_i: Matrix,
    pub b_i: Vec<f64>,
    pub wx_o: Matrix,
    pub wh_o: Matrix,
    pub b_o: Vec<f64>,
    pub wx_c: Matrix,
    pub wh_c: Matrix,
    pub b_c: Vec<f64>,
    pub w_out: Vec<f64>,
    pub b_out: f64,
}

/// Same shapes as the parameters; reused for gradients and Adam moments.
pub type Gradients = LstmParams;

impl LstmParams {
    pub fn zeros(n_features: usize, units: usize) -> Self {
        LstmParams {
            n_features,
            units,
            wx_f: Matrix::zeros(units, n_features),
            wh_f: Matrix::zeros(units, units),
            b_f: vec![0.0; units],
            wx_i: Matrix::zeros(units, n_features),
            wh_i: Matrix::zeros(units, units),
            b_i: vec![0.0; units],
            wx_o: Matrix::zeros(units, n_features),
            wh_o: Matrix::zeros(units, units),
            b_o: vec![0.0; units],
            wx_c: Matrix::zeros(units, n_features),
            wh_c: Matrix::zeros(units, units),
            b_c: vec![0.0; units],
            w_out: vec![0.0; units],
            b_out: 0.0,
        }
    }

    /// All tensors in one fixed order, for the optimizer and the
    /// finite-difference harness.
    pub fn tensors(&self) -> [&[f64]; 14] {
        [
            self.wx_f.data(),
            self.wh_f.data(),
            &self.b_f,
            self.wx_i.data(),
            self.wh_i.data(),
            &self.b_i,
            self.wx_o.data(),
            self.wh_o.data(),
            &self.b_o,
            self.wx_c.data(),
            self.wh_c.data(),
            &self.b_c,
            &self.w_out,
            std::slice::from_ref(&self.b_out),
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut [f64]; 14] {
        [
            self.wx_f.data_mut(),
            self.wh_f.data_mut(),
            &mut self.b_f,
            self.wx_i.data_mut(),
            self.wh_i.data_mut(),
            &mut self.b_i,
            self.wx_o.data_mut(),
            self.wh_o.data_mut(),
            &mut self.b_o,
            self.wx_c.data_mut(),
            self.wh_c.data_mut(),
            &mut self.b_c,
            &mut self.w_out,
            std::slice::from_mut(&mut self.b_out),
        ]
    }

    pub fn n_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|t| t.iter().all(|v| v.is_finite()))
    }

    pub fn check_shapes(&self) -> Result<()> {
        let (n, u) = (self.n_features, self.units);
        let ok = self.wx_f.rows() == u
            && self.wx_f.cols() == n
            && self.wh_f.rows() == u
            && self.wh_f.cols() == u
            && self.b_f.len() == u
            && self.wx_i.rows() == u
            && self.wx_i.cols() == n
            && self.wh_i.rows() == u
            && self.wh_i.cols() == u
            && self.b_i.len() == u
            && self.wx_o.rows() == u
            && self.wx_o.cols() == n
            && self.wh_o.rows() == u
            && self.wh_o.cols() == u
            && self.b_o.len() == u
            && self.wx_c.rows() == u
            && self.wx_c.cols() == n
            && self.wh_c.rows() == u
            && self.wh_c.cols() == u
            && self.b_c.len() == u
            && self.w_out.len() == u;
        if ok {
            Ok(())
        } else {
            Err(Error::data("model weights inconsistent with dims"))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmState {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

impl LstmState {
    pub fn zeros(units: usize) -> Self {
        LstmState {
            h: vec![0.0; units],
            c: vec![0.0; units],
        }
    }
}

fn glorot(m: &mut Matrix, fan_in: usize, fan_out: usize, seed: Seed) {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let mut rng = seed.rng();
    for v in m.data_mut() {
        *v = (crate::rng::uniform_f64(&mut rng) * 2.0 - 1.0) * limit;
    }
}

/// Orthogonalizes a seeded Gaussian square matrix with modified Gram-Schmidt
/// over columns, so Q^T Q = I.
fn orthogonal(u: usize, seed: Seed) -> Matrix {
    let mut rng = seed.rng();
    let normal = rand_distr::StandardNormal;
    let mut q = Matrix::zeros(u, u);
    for v in q.data_mut() {
        *v = normal.sample(&mut rng);
    }
    for col in 0..u {
        for prev in 0..col {
            let dot: f64 = (0..u).map(|r| q.get(r, col) * q.get(r, prev)).sum();
            for r in 0..u {
                let v = q.get(r, col) - dot * q.get(r, prev);
                q.set(r, col, v);
            }
        }
        let norm: f64 = (0..u).map(|r| q.get(r, col).powi(2)).sum::<f64>().sqrt();
        if norm < 1e-12 {
            // Degenerate draw (measure zero): fall back to a basis vector.
            for r in 0..u {
                q.set(r, col, if r == col { 1.0 } else { 0.0 });
            }
        } else {
            for r in 0..u {
                q.set(r, col, q.get(r, col) / norm);
            }
        }
    }
    q
}

/// Glorot-uniform input and readout weights, orthogonal recurrent weights,
/// forget bias 1, every other bias 0. Each tensor draws from its own derived
/// stream, so layouts never interact.
pub fn init_params(n_features: usize, units: usize, seed: Seed) -> Result<LstmParams> {
    if n_features < 1 || units < 1 {
        return Err(Error::config("init_params: dims must be >= 1"));
    }
    let mut p = LstmParams::zeros(n_features, units);
    glorot(&mut p.wx_f, n_features, units, seed.derive("init/wx_f"));
    glorot(&mut p.wx_i, n_features, units, seed.derive("init/wx_i"));
    glorot(&mut p.wx_o, n_features, units, seed.derive("init/wx_o"));
    glorot(&mut p.wx_c, n_features, units, seed.derive("init/wx_c"));
    p.wh_f = orthogonal(units, seed.derive("init/wh_f"));
    p.wh_i = orthogonal(units, seed.derive("init/wh_i"));
    p.wh_o = orthogonal(units, seed.derive("init/wh_o"));
    p.wh_c = orthogonal(units, seed.derive("init/wh_c"));
    p.b_f = vec![1.0; units];
    {
        let limit = (6.0 / (units + 1) as f64).sqrt();
        let mut rng = seed.derive("init/w_out").rng();
        for v in &mut p.w_out {
            *v = (crate::rng::uniform_f64(&mut rng) * 2.0 - 1.0) * limit;
        }
    }
    Ok(p)
}

/// One recurrent step over Eqs. 5-9.
pub fn cell_step(params: &LstmParams, x: &[f64], state: &LstmState) -> Result<LstmState> {
    if x.len() != params.n_features {
        return Err(Error::data(format!(
            "cell_step: input has {} features, model expects {}",
            x.len(),
            params.n_features
        )));
    }
    if state.h.len() != params.units || state.c.len() != params.units {
        return Err(Error::data("cell_step: state size does not match units"));
    }
    if x.iter().any(|v| !v.is_finite())
        || state.h.iter().any(|v| !v.is_finite())
        || state.c.iter().any(|v| !v.is_finite())
    {
        return Err(Error::numeric("cell_step: non-finite input"));
    }
    let u = params.units;
    let mut next = LstmState::zeros(u);
    for j in 0..u {
        let zf = gate_z(&params.wx_f, &params.wh_f, &params.b_f, j, x, &state.h);
        let zi = gate_z(&params.wx_i, &params.wh_i, &params.b_i, j, x, &state.h);
        let zo = gate_z(&params.wx_o, &params.wh_o, &params.b_o, j, x, &state.h);
        let zg = gate_z(&params.wx_c, &params.wh_c, &params.b_c, j, x, &state.h);
        let f = sigmoid(zf);
        let i = sigmoid(zi);
        let o = sigmoid(zo);
        let g = zg.tanh();
        let c = f * state.c[j] + i * g;
        next.c[j] = c;
        next.h[j] = o * c.tanh();
    }
    Ok(next)
}

#[inline]
fn gate_z(wx: &Matrix, wh: &Matrix, b: &[f64], j: usize, x: &[f64], h: &[f64]) -> f64 {
    let mut z = b[j];
    let wxr = wx.row(j);
    for (k, &xv) in x.iter().enumerate() {
        z += wxr[k] * xv;
    }
    let whr = wh.row(j);
    for (k, &hv) in h.iter().enumerate() {
        z += whr[k] * hv;
    }
    z
}

/// Per-step activations kept by `forward` for backprop. Planes are laid out
/// step-major: slice [t*U, (t+1)*U) is step t.
#[derive(Debug, Clone)]
pub struct Cache {
    pub w: usize,
    units: usize,
    f: Vec<f64>,
    i: Vec<f64>,
    o: Vec<f64>,
    g: Vec<f64>,
    c: Vec<f64>,
    tc: Vec<f64>,
    h: Vec<f64>,
    /// Readout probability.
    pub p: f64,
}

impl Cache {
    fn plane<'a>(&self, v: &'a [f64], t: usize) -> &'a [f64] {
        &v[t * self.units..(t + 1) * self.units]
    }
}

/// Runs `w` cell steps from a zero state over a flattened (w x n) window and
/// applies the sigmoid readout.
pub fn forward(params: &LstmParams, window: &[f64], w: usize) -> Result<(f64, Cache)> {
    let n = params.n_features;
    let u = params.units;
    if window.len() != w * n {
        return Err(Error::data(format!(
            "forward: window has {} values, expected {w} x {n}",
            window.len()
        )));
    }
    let mut cache = Cache {
        w,
        units: u,
        f: vec![0.0; w * u],
        i: vec![0.0; w * u],
        o: vec![0.0; w * u],
        g: vec![0.0; w * u],
        c: vec![0.0; w * u],
        tc: vec![0.0; w * u],
        h: vec![0.0; w * u],
        p: 0.0,
    };
    let mut h_prev = vec![0.0; u];
    let mut c_prev = vec![0.0; u];
    for t in 0..w {
        let x = &window[t * n..(t + 1) * n];
        for j in 0..u {
            let f = sigmoid(gate_z(&params.wx_f, &params.wh_f, &params.b_f, j, x, &h_prev));
            let i = sigmoid(gate_z(&params.wx_i, &params.wh_i, &params.b_i, j, x, &h_prev));
            let o = sigmoid(gate_z(&params.wx_o, &params.wh_o, &params.b_o, j, x, &h_prev));
            let g = gate_z(&params.wx_c, &params.wh_c, &params.b_c, j, x, &h_prev).tanh();
            let c = f * c_prev[j] + i * g;
            let tc = c.tanh();
            let at = t * u + j;
            cache.f[at] = f;
            cache.i[at] = i;
            cache.o[at] = o;
            cache.g[at] = g;
            cache.c[at] = c;
            cache.tc[at] = tc;
            cache.h[at] = o * tc;
        }
        h_prev.copy_from_slice(&cache.h[t * u..(t + 1) * u]);
        c_prev.copy_from_slice(&cache.c[t * u..(t + 1) * u]);
    }
    let h_last = &cache.h[(w - 1) * u..w * u];
    let z: f64 = params.b_out
        + params
            .w_out
            .iter()
            .zip(h_last)
            .map(|(a, b)| a * b)
            .sum::<f64>();
    cache.p = sigmoid(z);
    Ok((cache.p, cache))
}

/// Probability only, no cache allocation. Inference path.
pub fn forward_prob(params: &LstmParams, window: &[f64], w: usize) -> Result<f64> {
    let n = params.n_features;
    let u = params.units;
    if window.len() != w * n {
        return Err(Error::data(format!(
            "forward: window has {} values, expected {w} x {n}",
            window.len()
        )));
    }
    let mut state = LstmState::zeros(u);
    let mut next = LstmState::zeros(u);
    for t in 0..w {
        let x = &window[t * n..(t + 1) * n];
        for j in 0..u {
            let f = sigmoid(gate_z(&params.wx_f, &params.wh_f, &params.b_f, j, x, &state.h));
            let i = sigmoid(gate_z(&params.wx_i, &params.wh_i, &params.b_i, j, x, &state.h));
            let o = sigmoid(gate_z(&params.wx_o, &params.wh_o, &params.b_o, j, x, &state.h));
            let g = gate_z(&params.wx_c, &params.wh_c, &params.b_c, j, x, &state.h).tanh();
            let c = f * state.c[j] + i * g;
            next.c[j] = c;
            next.h[j] = o * c.tanh();
        }
        std::mem::swap(&mut state, &mut next);
    }
    let z: f64 = params.b_out
        + params
            .w_out
            .iter()
            .zip(&state.h)
            .map(|(a, b)| a * b)
            .sum::<f64>();
    Ok(sigmoid(z))
}

/// Scores every row of a (count x w*n) window matrix. Parallel over windows;
/// output order is the input order either way.
pub fn predict_batch(params: &LstmParams, windows: &Matrix, w: usize) -> Result<Vec<f64>> {
    if windows.cols() != w * params.n_features {
        return Err(Error::data(format!(
            "predict_batch: window dim {} vs {} x {}",
            windows.cols(),
            w,
            params.n_features
        )));
    }
    exec::par_map_indexed(windows.rows(), |r| forward_prob(params, windows.row(r), w))
        .into_iter()
        .collect()
}

/// Binary cross-entropy with the probability clamped to
/// [BCE_CLAMP, 1 - BCE_CLAMP].
pub fn bce_loss(p: f64, y: u8) -> f64 {
    let pc = p.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
    if y == 1 {
        -pc.ln()
    } else {
        -(1.0 - pc).ln()
    }
}

/// Mean-BCE gradients over a batch by full backprop through time.
/// `windows` is (B x w*n), `caches` must come from `forward` on the same
/// rows in the same order.
pub fn backward(
    params: &LstmParams,
    windows: &Matrix,
    targets: &[u8],
    caches: &[Cache],
    w: usize,
) -> Result<(f64, Gradients)> {
    let b = windows.rows();
    if b == 0 {
        return Err(Error::data("backward: empty batch"));
    }
    if targets.len() != b || caches.len() != b {
        return Err(Error::data(format!(
            "backward: batch {b} vs {} targets, {} caches",
            targets.len(),
            caches.len()
        )));
    }
    if windows.cols() != w * params.n_features {
        return Err(Error::data("backward: window dim mismatch"));
    }
    for c in caches {
        if c.w != w || c.units != params.units {
            return Err(Error::data("backward: cache shape mismatch"));
        }
    }

    // Per-window gradients in parallel, then a fixed-order reduction, so the
    // result is identical with and without threads.
    let per_window: Vec<(f64, Gradients)> = exec::par_map_indexed(b, |r| {
        backward_window(params, windows.row(r), targets[r], &caches[r], w)
    });
    let mut grads = LstmParams::zeros(params.n_features, params.units);
    let mut loss = 0.0;
    for (l, g) in &per_window {
        loss += l;
        let mut acc = grads.tensors_mut();
        let add = g.tensors();
        for (a, s) in acc.iter_mut().zip(add.iter()) {
            for (av, sv) in a.iter_mut().zip(s.iter()) {
                *av += sv;
            }
        }
    }
    let scale = 1.0 / b as f64;
    for t in grads.tensors_mut() {
        for v in t {
            *v *= scale;
        }
    }
    Ok((loss * scale, grads))
}

/// Convenience used by the trainer: forward + backward in one call.
pub fn loss_and_grads(
    params: &LstmParams,
    windows: &Matrix,
    targets: &[u8],
    w: usize,
) -> Result<(f64, Gradients)> {
    let caches: Vec<Cache> = exec::par_map_indexed(windows.rows(), |r| {
        forward(params, windows.row(r), w).map(|(_, cache)| cache)
    })
    .into_iter()
    .collect::<Result<_>>()?;
    backward(params, windows, targets, &caches, w)
}

fn backward_window(
    params: &LstmParams,
    window: &[f64],
    y: u8,
    cache: &Cache,
    w: usize,
) -> (f64, Gradients) {
    let n = params.n_features;
    let u = params.units;
    let p = cache.p;
    let loss = bce_loss(p, y);

    // d(loss)/d(readout z). Outside the clamp band the loss is flat in p, so
    // the gradient there is exactly 0, matching what finite differences see.
    let dz = if p > BCE_CLAMP && p < 1.0 - BCE_CLAMP {
        p - y as f64
    } else {
        0.0
    };

    let mut g = LstmParams::zeros(n, u);
    let h_last = cache.plane(&cache.h, w - 1);
    for j in 0..u {
        g.w_out[j] = dz * h_last[j];
    }
    g.b_out = dz;

    let mut dh: Vec<f64> = params.w_out.iter().map(|&v| v * dz).collect();
    let mut dc = vec![0.0; u];
    let zero = vec![0.0; u];
    for t in (0..w).rev() {
        let x = &window[t * n..(t + 1) * n];
        let f = cache.plane(&cache.f, t);
        let i = cache.plane(&cache.i, t);
        let o = cache.plane(&cache.o, t);
        let gg = cache.plane(&cache.g, t);
        let tc = cache.plane(&cache.tc, t);
        let (h_prev, c_prev): (&[f64], &[f64]) = if t == 0 {
            (&zero, &zero)
        } else {
            (cache.plane(&cache.h, t - 1), cache.plane(&cache.c, t - 1))
        };

        let mut dh_prev = vec![0.0; u];
        let mut dc_prev = vec![0.0; u];
        for j in 0..u {
            let do_ = dh[j] * tc[j];
            let dzo = do_ * o[j] * (1.0 - o[j]);
            let dcj = dc[j] + dh[j] * o[j] * (1.0 - tc[j] * tc[j]);
            let dzf = dcj * c_prev[j] * f[j] * (1.0 - f[j]);
            let dzi = dcj * gg[j] * i[j] * (1.0 - i[j]);
            let dzg = dcj * i[j] * (1.0 - gg[j] * gg[j]);
            dc_prev[j] = dcj * f[j];

            accumulate(&mut g.wx_f, &mut g.b_f, j, dzf, x);
            accumulate(&mut g.wx_i, &mut g.b_i, j, dzi, x);
            accumulate(&mut g.wx_o, &mut g.b_o, j, dzo, x);
            accumulate(&mut g.wx_c, &mut g.b_c, j, dzg, x);
            accumulate_h(&mut g.wh_f, j, dzf, h_prev);
            accumulate_h(&mut g.wh_i, j, dzi, h_prev);
            accumulate_h(&mut g.wh_o, j, dzo, h_prev);
            accumulate_h(&mut g.wh_c, j, dzg, h_prev);

            for k in 0..u {
                dh_prev[k] += params.wh_f.get(j, k) * dzf
                    + params.wh_i.get(j, k) * dzi
                    + params.wh_o.get(j, k) * dzo
                    + params.wh_c.get(j, k) * dzg;
            }
        }
        dh = dh_prev;
        dc = dc_prev;
    }
    (loss, g)
}

#[inline]
fn accumulate(wx: &mut Matrix, b: &mut [f64], j: usize, dz: f64, x: &[f64]) {
    b[j] += dz;
    let row = wx.row_mut(j);
    for (k, &xv) in x.iter().enumerate() {
        row[k] += dz * xv;
    }
}

#[inline]
fn accumulate_h(wh: &mut Matrix, j: usize, dz: f64, h_prev: &[f64]) {
    let row = wh.row_mut(j);
    for (k, &hv) in h_prev.iter().enumerate() {
        row[k] += dz * hv;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerDefaults {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for OptimizerDefaults {
    fn default() -> Self {
        OptimizerDefaults {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-7,
        }
    }
}

#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub cfg: OptimizerDefaults,
    pub step: u64,
    m: LstmParams,
    v: LstmParams,
}

impl OptimizerState {
    pub fn new(n_features: usize, units: usize, cfg: OptimizerDefaults) -> Self {
        OptimizerState {
            cfg,
            step: 0,
            m: LstmParams::zeros(n_features, units),
            v: LstmParams::zeros(n_features, units),
        }
    }
}

/// One Adam update with bias correction. Errors on non-finite gradients and
/// leaves the parameters untouched in that case.
pub fn adam_step(
    params: &mut LstmParams,
    grads: &Gradients,
    opt: &mut OptimizerState,
) -> Result<()> {
    if !grads.is_finite() {
        return Err(Error::numeric("adam_step: non-finite gradient"));
    }
    opt.step += 1;
    let t = opt.step as i32;
    let b1 = opt.cfg.beta1;
    let b2 = opt.cfg.beta2;
    let bc1 = 1.0 - b1.powi(t);
    let bc2 = 1.0 - b2.powi(t);
    let lr = opt.cfg.lr;
    let eps = opt.cfg.eps;

    let mut p = params.tensors_mut();
    let g = grads.tensors();
    let mut m = opt.m.tensors_mut();
    let mut v = opt.v.tensors_mut();
    for ti in 0..p.len() {
        let (pt, gt) = (&mut p[ti], g[ti]);
        let (mt, vt) = (&mut m[ti], &mut v[ti]);
        for k in 0..pt.len() {
            let gk = gt[k];
            mt[k] = b1 * mt[k] + (1.0 - b1) * gk;
            vt[k] = b2 * vt[k] + (1.0 - b2) * gk * gk;
            let mhat = mt[k] / bc1;
            let vhat = vt[k] / bc2;
            pt[k] -= lr * mhat / (vhat.sqrt() + eps);
        }
    }
    Ok(())
}

/// 1 iff p > tau, strictly.
pub fn classify(p: f64, tau: f64) -> u8 {
    u8::from(p > tau)
}

// ---------------------------------------------------------------------------
// Model artifact

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub n_features: usize,
    pub units: usize,
    pub window: usize,
}

/// Everything inference elsewhere needs: weights, scaler, selected features,
/// rule provenance, and the seeds that produced them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelArtifact {
    pub format_version: u32,
    pub created: String,
    pub dims: Dims,
    pub weights: LstmParams,
    pub optimizer_defaults: OptimizerDefaults,
    pub scaler: crate::prep::ScalerParams,
    pub features: crate::featsel::FeatureReport,
    pub rule_config: crate::rules::RuleConfig,
    pub seeds: SeedRecord,
    /// Producer-defined training provenance (split sizes, SMOTE mode, run
    /// config echo). Free-form so readers never break on additions.
    #[serde(default)]
    pub provenance: serde_json::Value,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedRecord {
    pub run_seed: u64,
}

pub fn save_model(artifact: &ModelArtifact) -> Result<String> {
    if !artifact.weights.is_finite() {
        return Err(Error::numeric("save_model: non-finite weight"));
    }
    artifact.weights.check_shapes()?;
    Ok(serde_json::to_string_pretty(artifact)?)
}

pub fn load_model(text: &str) -> Result<ModelArtifact> {
    let artifact: ModelArtifact = serde_json::from_str(text)
        .map_err(|e| Error::data(format!("model parse error: {e}")))?;
    if artifact.format_version != FORMAT_VERSION {
        return Err(Error::data(format!(
            "model format version {} unsupported (expected {FORMAT_VERSION})",
            artifact.format_version
        )));
    }
    let w = &artifact.weights;
    if w.n_features != artifact.dims.n_features || w.units != artifact.dims.units {
        return Err(Error::data("model dims disagree with weight dims"));
    }
    w.check_shapes()?;
    if !w.is_finite() {
        return Err(Error::numeric("model contains non-finite weight"));
    }
    if artifact.features.selected.len() != artifact.dims.n_features {
        return Err(Error::data(format!(
            "model selects {} features but dims.n_features = {}",
            artifact.features.selected.len(),
            artifact.dims.n_features
        )));
    }
    Ok(artifact)
}

impl ModelArtifact {
    /// Guards inference against mis-shaped input.
    pub fn check_input_width(&self, n_cols: usize) -> Result<()> {
        if n_cols != self.dims.n_features {
            return Err(Error::data(format!(
                "input has {n_cols} columns, model expects {}",
                self.dims.n_features
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn rand_window(w: usize, n: usize, seed: Seed) -> Vec<f64> {
        let mut rng = seed.rng();
        (0..w * n)
            .map(|_| rng::uniform_f64(&mut rng) * 2.0 - 1.0)
            .collect()
    }

    #[test]
    fn init_is_deterministic_and_shaped() {
        let a = init_params(10, 16, Seed(7)).unwrap();
        let b = init_params(10, 16, Seed(7)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.b_f, vec![1.0; 16], "forget bias 1");
        assert_eq!(a.b_i, vec![0.0; 16]);
        assert_eq!(a.b_out, 0.0);
        let limit = (6.0 / 26.0f64).sqrt();
        assert!(a.wx_f.data().iter().all(|v| v.abs() <= limit));
    }

    #[test]
    fn recurrent_blocks_are_orthogonal() {
        let p = init_params(5, 12, Seed(3)).unwrap();
        for wh in [&p.wh_f, &p.wh_i, &p.wh_o, &p.wh_c] {
            let qtq = wh.transpose().matmul(wh);
            for r in 0..12 {
                for c in 0..12 {
                    let expect = if r == c { 1.0 } else { 0.0 };
                    assert!(
                        (qtq.get(r, c) - expect).abs() < 1e-6,
                        "QtQ[{r},{c}] = {}",
                        qtq.get(r, c)
                    );
                }
            }
        }
    }

    #[test]
    fn cell_step_zero_params_zero_state() {
        let p = LstmParams::zeros(3, 4);
        let s = LstmState::zeros(4);
        let out = cell_step(&p, &[0.5, -1.0, 2.0], &s).unwrap();
        assert_eq!(out.h, vec![0.0; 4]);
        assert_eq!(out.c, vec![0.0; 4]);
    }

    #[test]
    fn cell_step_scalar_case() {
        // U=1, n=1, all weights 0, biases 0 except b_c=1, x=0, zero state:
        // f=i=o=0.5, c' = 0.5 tanh(1), h' = 0.5 tanh(c').
        let mut p = LstmParams::zeros(1, 1);
        p.b_c = vec![1.0];
        let out = cell_step(&p, &[0.0], &LstmState::zeros(1)).unwrap();
        assert!((out.c[0] - 0.3807970779778824).abs() < 1e-12, "{}", out.c[0]);
        assert!((out.h[0] - 0.18169974219452625).abs() < 1e-12, "{}", out.h[0]);
    }

    #[test]
    fn cell_step_h_bounded() {
        let p = init_params(4, 8, Seed(5)).unwrap();
        let mut s = LstmState::zeros(8);
        let mut rng = Seed(6).rng();
        for _ in 0..200 {
            let x: Vec<f64> = (0..4).map(|_| rng::uniform_f64(&mut rng) * 10.0 - 5.0).collect();
            s = cell_step(&p, &x, &s).unwrap();
            assert!(s.h.iter().all(|v| v.abs() < 1.0));
            assert!(s.c.iter().all(|v| v.is_finite()));
        }
    }

    #[test]
    fn cell_step_rejects_nan() {
        let p = LstmParams::zeros(2, 2);
        let s = LstmState::zeros(2);
        assert!(cell_step(&p, &[f64::NAN, 0.0], &s).is_err());
    }

    #[test]
    fn forward_zero_readout_gives_half() {
        let mut p = init_params(6, 8, Seed(2)).unwrap();
        p.w_out = vec![0.0; 8];
        p.b_out = 0.0;
        let win = rand_window(5, 6, Seed(3));
        let (prob, _) = forward(&p, &win, 5).unwrap();
        assert_eq!(prob, 0.5);
    }

    #[test]
    fn forward_w1_equals_cell_step_plus_readout() {
        let p = init_params(4, 6, Seed(9)).unwrap();
        let win = rand_window(1, 4, Seed(10));
        let (prob, _) = forward(&p, &win, 1).unwrap();
        let s = cell_step(&p, &win, &LstmState::zeros(6)).unwrap();
        let z: f64 = p.b_out + p.w_out.iter().zip(&s.h).map(|(a, b)| a * b).sum::<f64>();
        assert_eq!(prob, sigmoid(z));
        assert!(prob > 0.0 && prob < 1.0);
    }

    #[test]
    fn forward_prob_matches_forward_bitwise() {
        let p = init_params(7, 11, Seed(21)).unwrap();
        for k in 0..20 {
            let win = rand_window(6, 7, Seed(100 + k));
            let (a, _) = forward(&p, &win, 6).unwrap();
            let b = forward_prob(&p, &win, 6).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn predict_batch_matches_singles() {
        let p = init_params(3, 5, Seed(4)).unwrap();
        let w = 4;
        let rows = 9;
        let mut m = Matrix::zeros(rows, w * 3);
        for r in 0..rows {
            let win = rand_window(w, 3, Seed(200 + r as u64));
            m.row_mut(r).copy_from_slice(&win);
        }
        let batch = predict_batch(&p, &m, w).unwrap();
        for r in 0..rows {
            assert_eq!(batch[r], forward_prob(&p, m.row(r), w).unwrap());
        }
    }

    #[test]
    fn bce_known_values() {
        assert!((bce_loss(0.5, 0) - std::f64::consts::LN_2).abs() < 1e-15);
        assert!((bce_loss(0.5, 1) - std::f64::consts::LN_2).abs() < 1e-15);
        assert!((bce_loss(0.9, 1) - 0.10536051565782628).abs() < 1e-15);
        // Clamp bounds the loss at extreme confidence.
        assert!(bce_loss(1.0, 0) <= -(BCE_CLAMP.ln()) + 1e-9);
        assert!(bce_loss(0.0, 1).is_finite());
    }

    #[test]
    fn duplicated_windows_average_to_single_gradient() {
        let p = init_params(4, 5, Seed(31)).unwrap();
        let w = 3;
        let win = rand_window(w, 4, Seed(32));
        let mut one = Matrix::zeros(1, w * 4);
        one.row_mut(0).copy_from_slice(&win);
        let mut four = Matrix::zeros(4, w * 4);
        for r in 0..4 {
            four.row_mut(r).copy_from_slice(&win);
        }
        let (l1, g1) = loss_and_grads(&p, &one, &[1], w).unwrap();
        let (l4, g4) = loss_and_grads(&p, &four, &[1; 4], w).unwrap();
        assert!((l1 - l4).abs() < 1e-12);
        for (a, b) in g1.tensors().iter().zip(g4.tensors().iter()) {
            for (x, y) in a.iter().zip(b.iter()) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn backward_rejects_empty_and_mismatched() {
        let p = init_params(2, 3, Seed(1)).unwrap();
        let empty = Matrix::zeros(0, 4);
        assert!(backward(&p, &empty, &[], &[], 2).is_err());
        let m = Matrix::zeros(1, 4);
        let (_, cache) = forward(&p, m.row(0), 2).unwrap();
        assert!(backward(&p, &m, &[1, 0], &[cache], 2).is_err());
    }

    #[test]
    fn gradcheck_small_instance() {
        // Full 20-instance sweep lives in the acceptance suite; this is the
        // fast in-module version.
        let n = 3;
        let u = 4;
        let w = 3;
        let b = 2;
        let mut params = init_params(n, u, Seed(41)).unwrap();
        let mut windows = Matrix::zeros(b, w * n);
        for r in 0..b {
            windows
                .row_mut(r)
                .copy_from_slice(&rand_window(w, n, Seed(50 + r as u64)));
        }
        let targets = vec![1u8, 0];
        let (_, grads) = loss_and_grads(&params, &windows, &targets, w).unwrap();

        let loss_of = |p: &LstmParams| -> f64 {
            let mut total = 0.0;
            for r in 0..b {
                let (prob, _) = forward(p, windows.row(r), w).unwrap();
                total += bce_loss(prob, targets[r]);
            }
            total / b as f64
        };
        let step = 1e-5;
        let g_all = grads.tensors();
        for ti in 0..14 {
            for k in 0..g_all[ti].len() {
                let orig = params.tensors()[ti][k];
                params.tensors_mut()[ti][k] = orig + step;
                let up = loss_of(&params);
                params.tensors_mut()[ti][k] = orig - step;
                let down = loss_of(&params);
                params.tensors_mut()[ti][k] = orig;
                let fd = (up - down) / (2.0 * step);
                let analytic = g_all[ti][k];
                let rel = (analytic - fd).abs() / fd.abs().max(1e-8);
                assert!(
                    rel < 1e-4,
                    "tensor {ti} index {k}: analytic {analytic} vs fd {fd} (rel {rel})"
                );
            }
        }
    }

    #[test]
    fn adam_zero_gradient_keeps_params() {
        let mut p = init_params(3, 4, Seed(8)).unwrap();
        let before = p.clone();
        let g = LstmParams::zeros(3, 4);
        let mut opt = OptimizerState::new(3, 4, OptimizerDefaults::default());
        adam_step(&mut p, &g, &mut opt).unwrap();
        assert_eq!(p, before);
        assert_eq!(opt.step, 1);
    }

    #[test]
    fn adam_first_step_is_signed_lr() {
        let mut p = LstmParams::zeros(1, 1);
        let mut g = LstmParams::zeros(1, 1);
        g.wx_f.set(0, 0, 0.25);
        g.b_i[0] = -3.0;
        let mut opt = OptimizerState::new(1, 1, OptimizerDefaults::default());
        adam_step(&mut p, &g, &mut opt).unwrap();
        // First step: mhat = g, vhat = g^2, delta = -lr g / (|g| + eps).
        assert!((p.wx_f.get(0, 0) + 1e-3).abs() < 1e-6);
        assert!((p.b_i[0] - 1e-3).abs() < 1e-6);
        assert_eq!(p.b_o[0], 0.0);
    }

    #[test]
    fn adam_rejects_non_finite_grads() {
        let mut p = LstmParams::zeros(1, 1);
        let mut g = LstmParams::zeros(1, 1);
        g.b_f[0] = f64::NAN;
        let before = p.clone();
        let mut opt = OptimizerState::new(1, 1, OptimizerDefaults::default());
        assert!(adam_step(&mut p, &g, &mut opt).is_err());
        assert_eq!(p, before);
    }

    #[test]
    fn adam_trajectories_are_deterministic() {
        let run = || {
            let mut p = init_params(3, 4, Seed(77)).unwrap();
            let mut opt = OptimizerState::new(3, 4, OptimizerDefaults::default());
            let w = 2;
            let mut m = Matrix::zeros(3, w * 3);
            for r in 0..3 {
                m.row_mut(r)
                    .copy_from_slice(&rand_window(w, 3, Seed(300 + r as u64)));
            }
            let y = vec![1, 0, 1];
            for _ in 0..5 {
                let (_, g) = loss_and_grads(&p, &m, &y, w).unwrap();
                adam_step(&mut p, &g, &mut opt).unwrap();
            }
            p
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn classify_boundary_is_strict() {
        assert_eq!(classify(0.6, 0.5), 1);
        assert_eq!(classify(0.5, 0.5), 0);
        assert_eq!(classify(1e-12, 0.0), 1);
        assert_eq!(classify(0.0, 0.0), 0);
    }

    fn artifact_fixture() -> ModelArtifact {
        let params = init_params(4, 6, Seed(55)).unwrap();
        ModelArtifact {
            format_version: FORMAT_VERSION,
            created: "2026-01-01T00:00:00Z".into(),
            dims: Dims {
                n_features: 4,
                units: 6,
                window: 5,
            },
            weights: params,
            optimizer_defaults: OptimizerDefaults::default(),
            scaler: crate::prep::ScalerParams {
                mean: vec![0.0; 4],
                std: vec![1.0; 4],
            },
            features: crate::featsel::FeatureReport {
                stage1_removed: vec![],
                stage2_removed: vec![],
                stage3_removed: vec![],
                selected: vec!["a".into(), "b".into(), "c".into(), "d".into()],
                target_count: 4,
            },
            rule_config: crate::rules::RuleConfig::default(),
            seeds: SeedRecord { run_seed: 42 },
            provenance: serde_json::Value::Null,
        }
    }

    #[test]
    fn model_round_trip_preserves_forward_bits() {
        let art = artifact_fixture();
        let text = save_model(&art).unwrap();
        let back = load_model(&text).unwrap();
        assert_eq!(back.weights, art.weights);
        for k in 0..100 {
            let win = rand_window(5, 4, Seed(900 + k));
            let a = forward_prob(&art.weights, &win, 5).unwrap();
            let b = forward_prob(&back.weights, &win, 5).unwrap();
            assert_eq!(a, b, "window {k}");
        }
    }

    #[test]
    fn model_load_rejects_bad_inputs() {
        let art = artifact_fixture();
        let text = save_model(&art).unwrap();
        assert!(load_model(&text[..text.len() / 2]).is_err(), "truncated");

        let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
        v["format_version"] = serde_json::json!(99);
        assert!(load_model(&v.to_string()).is_err(), "version");

        let mut bad_dims = art.clone();
        bad_dims.dims.n_features = 9;
        let err = save_model(&bad_dims)
            .and_then(|t| load_model(&t))
            .unwrap_err()
            .to_string();
        assert!(err.contains('9') || err.contains("dims"), "{err}");

        let mut bad_w = art.clone();
        bad_w.weights.b_f[0] = f64::NAN;
        assert!(save_model(&bad_w).is_err(), "non-finite weight refused at save");
    }

    #[test]
    fn artifact_names_both_widths_on_input_mismatch() {
        let art = artifact_fixture();
        let err = art.check_input_width(9).unwrap_err().to_string();
        assert!(err.contains('9') && err.contains('4'), "{err}");
    }
}
