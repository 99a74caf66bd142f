//! Two-head perceptron task learner with manual backpropagation.
//!
//! A shared trunk (two affine layers with leaky-ReLU) feeds an instance head
//! and a bag head. Instance scores are row-wise softmax over the task's
//! active label subset; bag scores are a softmax over the bag head applied to
//! column-wise max-pooled trunk features. The task loss is
//! ||y - g||^2 + ||g - MP(z)||^2 with g the bag scores and MP(z) the
//! column-wise max of the instance scores. Both the parameter gradient and
//! the input gradient d(loss)/dX̂ are computed by hand; the latter feeds the
//! context learner's local update.

use std::fmt::Write as _;
use std::path::Path;

use ndarray::{Array1, Array2};
use rand::Rng;

use crate::error::{Error, Result};
use crate::seed::{fnv1a64, rng_for};

/// Trunk and head parameters. Values are immutable snapshots; updates build
/// new instances.
#[derive(Debug, Clone, PartialEq)]
pub struct OmegaParams {
    /// k × h1
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    /// h1 × h2
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
    /// h2 × q, instance head
    pub wi: Array2<f64>,
    pub bi: Array1<f64>,
    /// h2 × q, bag head
    pub wb: Array2<f64>,
    pub bb: Array1<f64>,
    /// Leaky-ReLU slope of the trunk activations.
    pub slope: f64,
}

impl OmegaParams {
    /// Xavier-uniform weights; biases uniform in (-0.1, 0.1). Continuous
    /// init keeps every coordinate away from exact zero, which the
    /// element-wise product adaptation would otherwise pin there.
    pub fn init(k: usize, h1: usize, h2: usize, q: usize, slope: f64, seed: u64) -> OmegaParams {
        let mut rng = rng_for(seed, "omega-init");
        let mut xavier = |rows: usize, cols: usize| {
            let bound = (6.0 / (rows + cols) as f64).sqrt();
            Array2::from_shape_fn((rows, cols), |_| (rng.random::<f64>() * 2.0 - 1.0) * bound)
        };
        let w1 = xavier(k, h1);
        let w2 = xavier(h1, h2);
        let wi = xavier(h2, q);
        let wb = xavier(h2, q);
        let mut rng = rng_for(seed, "omega-init-bias");
        let mut bias = |len: usize| {
            Array1::from_shape_fn(len, |_| (rng.random::<f64>() * 2.0 - 1.0) * 0.1)
        };
        OmegaParams {
            w1,
            b1: bias(h1),
            w2,
            b2: bias(h2),
            wi,
            bi: bias(q),
            wb,
            bb: bias(q),
            slope,
        }
    }

    pub fn dims(&self) -> (usize, usize, usize, usize) {
        (
            self.w1.nrows(),
            self.w1.ncols(),
            self.w2.ncols(),
            self.wi.ncols(),
        )
    }

    pub fn zeros_like(&self) -> OmegaParams {
        OmegaParams {
            w1: Array2::zeros(self.w1.dim()),
            b1: Array1::zeros(self.b1.len()),
            w2: Array2::zeros(self.w2.dim()),
            b2: Array1::zeros(self.b2.len()),
            wi: Array2::zeros(self.wi.dim()),
            bi: Array1::zeros(self.bi.len()),
            wb: Array2::zeros(self.wb.dim()),
            bb: Array1::zeros(self.bb.len()),
            slope: self.slope,
        }
    }

    fn same_shape(&self, other: &OmegaParams) -> bool {
        self.w1.dim() == other.w1.dim()
            && self.w2.dim() == other.w2.dim()
            && self.wi.dim() == other.wi.dim()
            && self.wb.dim() == other.wb.dim()
    }

    /// Element-wise product with a same-shape parameter set.
    pub fn elementwise_mul(&self, other: &OmegaParams) -> Result<OmegaParams> {
        if !self.same_shape(other) {
            return Err(Error::ShapeMismatch(
                "element-wise product of differently-shaped parameters".into(),
            ));
        }
        Ok(OmegaParams {
            w1: &self.w1 * &other.w1,
            b1: &self.b1 * &other.b1,
            w2: &self.w2 * &other.w2,
            b2: &self.b2 * &other.b2,
            wi: &self.wi * &other.wi,
            bi: &self.bi * &other.bi,
            wb: &self.wb * &other.wb,
            bb: &self.bb * &other.bb,
            slope: self.slope,
        })
    }

    /// self += c * other.
    pub fn scaled_add(&mut self, c: f64, other: &OmegaParams) {
        self.w1.scaled_add(c, &other.w1);
        self.b1.scaled_add(c, &other.b1);
        self.w2.scaled_add(c, &other.w2);
        self.b2.scaled_add(c, &other.b2);
        self.wi.scaled_add(c, &other.wi);
        self.bi.scaled_add(c, &other.bi);
        self.wb.scaled_add(c, &other.wb);
        self.bb.scaled_add(c, &other.bb);
    }

    pub fn scale(&mut self, c: f64) {
        for t in self.tensors_mut() {
            for v in t {
                *v *= c;
            }
        }
    }

    pub fn all_finite(&self) -> bool {
        self.flat_iter().all(|v| v.is_finite())
    }

    fn tensors(&self) -> [&[f64]; 8] {
        [
            self.w1.as_slice().unwrap(),
            self.b1.as_slice().unwrap(),
            self.w2.as_slice().unwrap(),
            self.b2.as_slice().unwrap(),
            self.wi.as_slice().unwrap(),
            self.bi.as_slice().unwrap(),
            self.wb.as_slice().unwrap(),
            self.bb.as_slice().unwrap(),
        ]
    }

    fn tensors_mut(&mut self) -> [&mut [f64]; 8] {
        [
            self.w1.as_slice_mut().unwrap(),
            self.b1.as_slice_mut().unwrap(),
            self.w2.as_slice_mut().unwrap(),
            self.b2.as_slice_mut().unwrap(),
            self.wi.as_slice_mut().unwrap(),
            self.bi.as_slice_mut().unwrap(),
            self.wb.as_slice_mut().unwrap(),
            self.bb.as_slice_mut().unwrap(),
        ]
    }

    /// Total number of scalar parameters.
    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn flat_iter(&self) -> impl Iterator<Item = f64> + '_ {
        self.tensors().into_iter().flatten().copied().collect::<Vec<_>>().into_iter()
    }

    /// Read the flat-indexed parameter `i` (w1, b1, w2, b2, wi, bi, wb, bb,
    /// row-major within each tensor).
    pub fn get_flat(&self, i: usize) -> f64 {
        let mut i = i;
        for t in self.tensors() {
            if i < t.len() {
                return t[i];
            }
            i -= t.len();
        }
        panic!("flat index out of range");
    }

    pub fn add_flat(&mut self, i: usize, delta: f64) {
        let mut i = i;
        for t in self.tensors_mut() {
            if i < t.len() {
                t[i] += delta;
                return;
            }
            i -= t.len();
        }
        panic!("flat index out of range");
    }

    /// Human-readable name of flat coordinate `i`, for gradient reports.
    pub fn describe_flat(&self, i: usize) -> String {
        let names = ["w1", "b1", "w2", "b2", "wi", "bi", "wb", "bb"];
        let mut i = i;
        for (name, t) in names.iter().zip(self.tensors()) {
            if i < t.len() {
                return format!("{name}[{i}]");
            }
            i -= t.len();
        }
        "out-of-range".into()
    }

    /// Checkpoint format: shape header, one line of floats per tensor, and a
    /// trailing FNV-1a64 checksum over the preceding bytes.
    pub fn to_text(&self) -> String {
        let (k, h1, h2, q) = self.dims();
        let mut s = String::new();
        let _ = writeln!(s, "OMEGA v1 k={k} h1={h1} h2={h2} q={q} slope={}", self.slope);
        let names = ["w1", "b1", "w2", "b2", "wi", "bi", "wb", "bb"];
        for (name, t) in names.iter().zip(self.tensors()) {
            let _ = write!(s, "{name}");
            for v in t {
                let _ = write!(s, " {v}");
            }
            s.push('\n');
        }
        let _ = writeln!(s, "CHECKSUM {:016x}", fnv1a64(s.as_bytes()));
        s
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<OmegaParams> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<OmegaParams> {
        let checksum_pos = text.rfind("CHECKSUM").ok_or(Error::MalformedRecord {
            line: 0,
            detail: "checkpoint missing CHECKSUM line".into(),
        })?;
        let body = &text[..checksum_pos];
        let declared = text[checksum_pos..]
            .split_whitespace()
            .nth(1)
            .and_then(|h| u64::from_str_radix(h, 16).ok())
            .ok_or(Error::MalformedRecord {
                line: 0,
                detail: "bad CHECKSUM line".into(),
            })?;
        if fnv1a64(body.as_bytes()) != declared {
            return Err(Error::MalformedRecord {
                line: 0,
                detail: "checkpoint checksum mismatch".into(),
            });
        }
        let mut lines = body.lines();
        let header = lines.next().ok_or(Error::MalformedHeader {
            line: 1,
            detail: "empty checkpoint".into(),
        })?;
        let mut tok = header.split_whitespace();
        if tok.next() != Some("OMEGA") || tok.next() != Some("v1") {
            return Err(Error::MalformedHeader {
                line: 1,
                detail: "expected 'OMEGA v1 ...'".into(),
            });
        }
        let (mut k, mut h1, mut h2, mut q, mut slope) = (0usize, 0usize, 0usize, 0usize, 0.01f64);
        for kv in tok {
            let (key, v) = kv.split_once('=').ok_or_else(|| Error::MalformedHeader {
                line: 1,
                detail: format!("bad header field '{kv}'"),
            })?;
            let bad = || Error::MalformedHeader {
                line: 1,
                detail: format!("bad value in '{kv}'"),
            };
            match key {
                "k" => k = v.parse().map_err(|_| bad())?,
                "h1" => h1 = v.parse().map_err(|_| bad())?,
                "h2" => h2 = v.parse().map_err(|_| bad())?,
                "q" => q = v.parse().map_err(|_| bad())?,
                "slope" => slope = v.parse().map_err(|_| bad())?,
                _ => {
                    return Err(Error::MalformedHeader {
                        line: 1,
                        detail: format!("unknown header field '{key}'"),
                    })
                }
            }
        }
        let mut out = OmegaParams {
            w1: Array2::zeros((k, h1)),
            b1: Array1::zeros(h1),
            w2: Array2::zeros((h1, h2)),
            b2: Array1::zeros(h2),
            wi: Array2::zeros((h2, q)),
            bi: Array1::zeros(q),
            wb: Array2::zeros((h2, q)),
            bb: Array1::zeros(q),
            slope,
        };
        for (ln, line) in lines.enumerate() {
            let lineno = ln + 2;
            let mut tok = line.split_whitespace();
            let Some(name) = tok.next() else { continue };
            let vals: std::result::Result<Vec<f64>, _> =
                tok.map(|t| t.parse::<f64>()).collect();
            let vals = vals.map_err(|e| Error::MalformedRecord {
                line: lineno,
                detail: format!("bad float: {e}"),
            })?;
            let names = ["w1", "b1", "w2", "b2", "wi", "bi", "wb", "bb"];
            let idx = names
                .iter()
                .position(|n| *n == name)
                .ok_or_else(|| Error::MalformedRecord {
                    line: lineno,
                    detail: format!("unknown tensor '{name}'"),
                })?;
            let slot = &mut out.tensors_mut()[idx];
            if vals.len() != slot.len() {
                return Err(Error::DimensionMismatch {
                    line: lineno,
                    expected: slot.len(),
                    got: vals.len(),
                });
            }
            slot.copy_from_slice(&vals);
        }
        Ok(out)
    }
}

/// Column-wise max with the (first, on ties) argmax row per column; the
/// argmax rows are where the subgradient routes.
pub fn max_pool_columns(m: &Array2<f64>) -> Result<(Array1<f64>, Vec<usize>)> {
    if m.nrows() == 0 {
        return Err(Error::ShapeMismatch("max-pool of an empty matrix".into()));
    }
    let mut out = Array1::zeros(m.ncols());
    let mut arg = vec![0usize; m.ncols()];
    for j in 0..m.ncols() {
        let mut best = m[[0, j]];
        let mut best_i = 0;
        for i in 1..m.nrows() {
            if m[[i, j]] > best {
                best = m[[i, j]];
                best_i = i;
            }
        }
        out[j] = best;
        arg[j] = best_i;
    }
    Ok((out, arg))
}

fn leaky(x: f64, slope: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        slope * x
    }
}

fn leaky_deriv(x: f64, slope: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        slope
    }
}

fn softmax(logits: &Array1<f64>) -> Array1<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exp = logits.mapv(|v| (v - max).exp());
    let sum = exp.sum();
    exp / sum
}

/// Forward outputs plus every intermediate needed for backprop.
#[derive(Debug, Clone)]
pub struct TaskPrediction {
    /// n_i × q_active, row-stochastic.
    pub instance_scores: Array2<f64>,
    /// Length q_active, softmax over the bag head.
    pub bag_scores: Array1<f64>,
    /// Active head columns used by this prediction.
    pub labels: Vec<usize>,
    pre1: Array2<f64>,
    h1a: Array2<f64>,
    pre2: Array2<f64>,
    h2a: Array2<f64>,
    pooled_arg: Vec<usize>,
    pooled: Array1<f64>,
}

/// Both gradients of the task loss.
#[derive(Debug, Clone)]
pub struct TaskGradients {
    pub d_omega: OmegaParams,
    pub d_xhat: Array2<f64>,
}

/// The two quadratic penalty terms of the task loss given bag scores `g`,
/// pooled instance scores `m`, and the 0/1 indicator `y`.
pub fn loss_terms(y: &Array1<f64>, g: &Array1<f64>, m: &Array1<f64>) -> f64 {
    let fit = (y - g).mapv(|v| v * v).sum();
    let consistency = (g - m).mapv(|v| v * v).sum();
    fit + consistency
}

/// Forward pass over the active label subset `labels` (head column indices).
pub fn forward(omega: &OmegaParams, xhat: &Array2<f64>, labels: &[usize]) -> Result<TaskPrediction> {
    let (k, _h1, h2, q) = omega.dims();
    if xhat.ncols() != k {
        return Err(Error::ShapeMismatch(format!(
            "input has {} columns, trunk expects {k}",
            xhat.ncols()
        )));
    }
    if xhat.nrows() == 0 {
        return Err(Error::ShapeMismatch("bag with zero instances".into()));
    }
    if labels.is_empty() {
        return Err(Error::ShapeMismatch("empty active label subset".into()));
    }
    if let Some(&bad) = labels.iter().find(|&&c| c >= q) {
        return Err(Error::ShapeMismatch(format!(
            "label column {bad} out of range for {q} heads"
        )));
    }
    if xhat.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("task learner input".into()));
    }
    let slope = omega.slope;
    let n = xhat.nrows();
    let qa = labels.len();

    let mut pre1 = xhat.dot(&omega.w1);
    for mut row in pre1.rows_mut() {
        row += &omega.b1;
    }
    let h1a = pre1.mapv(|v| leaky(v, slope));
    let mut pre2 = h1a.dot(&omega.w2);
    for mut row in pre2.rows_mut() {
        row += &omega.b2;
    }
    let h2a = pre2.mapv(|v| leaky(v, slope));

    let mut instance_scores = Array2::zeros((n, qa));
    for i in 0..n {
        let mut logits = Array1::zeros(qa);
        for (j, &col) in labels.iter().enumerate() {
            let mut acc = omega.bi[col];
            for t in 0..h2 {
                acc += h2a[[i, t]] * omega.wi[[t, col]];
            }
            logits[j] = acc;
        }
        let sm = softmax(&logits);
        instance_scores.row_mut(i).assign(&sm);
    }

    let (pooled, pooled_arg) = max_pool_columns(&h2a)?;
    let mut bag_logits = Array1::zeros(qa);
    for (j, &col) in labels.iter().enumerate() {
        let mut acc = omega.bb[col];
        for t in 0..h2 {
            acc += pooled[t] * omega.wb[[t, col]];
        }
        bag_logits[j] = acc;
    }
    let bag_scores = softmax(&bag_logits);

    Ok(TaskPrediction {
        instance_scores,
        bag_scores,
        labels: labels.to_vec(),
        pre1,
        h1a,
        pre2,
        h2a,
        pooled_arg,
        pooled,
    })
}

/// Task loss with full gradients: ||y - g||^2 + ||g - MP(z)||^2, plus
/// d(loss)/dω and d(loss)/dX̂.
pub fn task_loss(
    omega: &OmegaParams,
    xhat: &Array2<f64>,
    y: &Array1<f64>,
    labels: &[usize],
) -> Result<(f64, TaskGradients)> {
    if y.len() != labels.len() {
        return Err(Error::ShapeMismatch(format!(
            "indicator has {} entries for {} active labels",
            y.len(),
            labels.len()
        )));
    }
    let pred = forward(omega, xhat, labels)?;
    let slope = omega.slope;
    let n = xhat.nrows();
    let qa = labels.len();
    let (_k, _h1, h2, _q) = omega.dims();

    let (m, m_arg) = max_pool_columns(&pred.instance_scores)?;
    let g = &pred.bag_scores;
    let loss = loss_terms(y, g, &m);

    // d(loss)/dg and d(loss)/dm.
    let dg = (g - y) * 2.0 + (g - &m) * 2.0;
    let dm = (&m - g) * 2.0;

    let mut grads = omega.zeros_like();

    // Bag-head softmax backward: dblog = g ⊙ (dg - <dg, g>).
    let inner = dg.dot(g);
    let dblog = g * &(&dg - inner);
    // Bag head parameters and pooled-feature gradient.
    let mut dpooled: Array1<f64> = Array1::zeros(h2);
    for (j, &col) in labels.iter().enumerate() {
        grads.bb[col] += dblog[j];
        for t in 0..h2 {
            grads.wb[[t, col]] += pred.pooled[t] * dblog[j];
            dpooled[t] += omega.wb[[t, col]] * dblog[j];
        }
    }

    // Instance-score gradient arrives only through the pooled max m.
    let mut dz = Array2::zeros((n, qa));
    for j in 0..qa {
        dz[[m_arg[j], j]] += dm[j];
    }
    // Row-softmax backward.
    let mut dzlog = Array2::zeros((n, qa));
    for i in 0..n {
        let zi = pred.instance_scores.row(i);
        let dzi = dz.row(i);
        let inner = dzi.dot(&zi);
        for j in 0..qa {
            dzlog[[i, j]] = zi[j] * (dzi[j] - inner);
        }
    }

    // Instance head parameters and trunk-feature gradient.
    let mut dh2a = Array2::zeros((n, h2));
    for (j, &col) in labels.iter().enumerate() {
        for i in 0..n {
            let dv = dzlog[[i, j]];
            if dv == 0.0 {
                continue;
            }
            grads.bi[col] += dv;
            for t in 0..h2 {
                grads.wi[[t, col]] += pred.h2a[[i, t]] * dv;
                dh2a[[i, t]] += omega.wi[[t, col]] * dv;
            }
        }
    }
    // Route the pooled gradient to each column's argmax row.
    for t in 0..h2 {
        dh2a[[pred.pooled_arg[t], t]] += dpooled[t];
    }

    // Trunk backward.
    let dpre2 = &dh2a * &pred.pre2.mapv(|v| leaky_deriv(v, slope));
    grads.w2 = pred.h1a.t().dot(&dpre2);
    grads.b2 = dpre2.sum_axis(ndarray::Axis(0));
    let dh1a = dpre2.dot(&omega.w2.t());
    let dpre1 = &dh1a * &pred.pre1.mapv(|v| leaky_deriv(v, slope));
    grads.w1 = xhat.t().dot(&dpre1);
    grads.b1 = dpre1.sum_axis(ndarray::Axis(0));
    let d_xhat = dpre1.dot(&omega.w1.t());

    Ok((
        loss,
        TaskGradients {
            d_omega: grads,
            d_xhat,
        },
    ))
}

/// Worst-coordinate comparison of analytic vs central-difference gradients.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_coordinate: String,
}

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / (a.abs() + n.abs()).max(1e-8)
}

/// Compare every analytic partial (all of ω, then all of X̂) against central
/// finite differences with step `h`.
pub fn grad_check(
    omega: &OmegaParams,
    xhat: &Array2<f64>,
    y: &Array1<f64>,
    labels: &[usize],
    h: f64,
) -> Result<GradCheckReport> {
    if h <= 0.0 {
        return Err(Error::InvalidConfig("finite-difference step must be > 0".into()));
    }
    let (_, analytic) = task_loss(omega, xhat, y, labels)?;
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_coordinate: String::from("none"),
    };
    let mut consider = |err: f64, name: String| {
        if err > report.max_rel_error {
            report.max_rel_error = err;
            report.worst_coordinate = name;
        }
    };

    for i in 0..omega.num_params() {
        let mut plus = omega.clone();
        plus.add_flat(i, h);
        let mut minus = omega.clone();
        minus.add_flat(i, -h);
        let lp = task_loss(&plus, xhat, y, labels)?.0;
        let lm = task_loss(&minus, xhat, y, labels)?.0;
        let fd = (lp - lm) / (2.0 * h);
        consider(rel_err(analytic.d_omega.get_flat(i), fd), omega.describe_flat(i));
    }

    for i in 0..xhat.nrows() {
        for j in 0..xhat.ncols() {
            let mut plus = xhat.clone();
            plus[[i, j]] += h;
            let mut minus = xhat.clone();
            minus[[i, j]] -= h;
            let lp = task_loss(omega, &plus, y, labels)?.0;
            let lm = task_loss(omega, &minus, y, labels)?.0;
            let fd = (lp - lm) / (2.0 * h);
            consider(rel_err(analytic.d_xhat[[i, j]], fd), format!("xhat[{i},{j}]"));
        }
    }
    Ok(report)
}

/// Draw a random problem whose pooling margins and pre-activations stay away
/// from ties and kinks, so finite differences are trustworthy. Used by tests
/// and the acceptance suite.
pub fn random_smooth_problem(
    k: usize,
    h1: usize,
    h2: usize,
    q: usize,
    n_i: usize,
    q_active: usize,
    seed: u64,
) -> (OmegaParams, Array2<f64>, Array1<f64>, Vec<usize>) {
    let margin = 1e-3;
    let mut attempt = 0u64;
    loop {
        let omega = OmegaParams::init(k, h1, h2, q, 0.1, seed.wrapping_add(attempt * 7919));
        let mut rng = rng_for(seed.wrapping_add(attempt * 104729), "smooth-problem");
        let xhat = Array2::from_shape_fn((n_i, k), |_| rng.random::<f64>() * 2.0 - 1.0);
        let labels: Vec<usize> = (0..q_active).collect();
        let y = Array1::from_shape_fn(q_active, |_| if rng.random::<bool>() { 1.0 } else { 0.0 });
        if problem_is_smooth(&omega, &xhat, &labels, margin) {
            return (omega, xhat, y, labels);
        }
        attempt += 1;
    }
}

fn problem_is_smooth(
    omega: &OmegaParams,
    xhat: &Array2<f64>,
    labels: &[usize],
    margin: f64,
) -> bool {
    let Ok(pred) = forward(omega, xhat, labels) else {
        return false;
    };
    if pred.pre1.iter().any(|v| v.abs() < margin) || pred.pre2.iter().any(|v| v.abs() < margin) {
        return false;
    }
    // Pooling margins: the best row must clear the runner-up comfortably,
    // both in trunk features and in instance scores.
    for m in [&pred.h2a, &pred.instance_scores] {
        if m.nrows() < 2 {
            continue;
        }
        for j in 0..m.ncols() {
            let mut col: Vec<f64> = m.column(j).to_vec();
            col.sort_by(|a, b| b.partial_cmp(a).unwrap());
            if col[0] - col[1] < margin {
                return false;
            }
        }
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn small_problem(seed: u64) -> (OmegaParams, Array2<f64>, Array1<f64>, Vec<usize>) {
        random_smooth_problem(8, 6, 6, 5, 4, 5, seed)
    }

    #[test]
    fn max_pool_examples() {
        let (v, arg) = max_pool_columns(&array![[0.2, 0.7], [0.5, 0.3]]).unwrap();
        assert_eq!(v, array![0.5, 0.7]);
        assert_eq!(arg, vec![1, 0]);

        let (v, arg) = max_pool_columns(&array![[1.0, -2.0, 3.0]]).unwrap();
        assert_eq!(v, array![1.0, -2.0, 3.0]);
        assert_eq!(arg, vec![0, 0, 0]);

        assert!(max_pool_columns(&Array2::zeros((0, 3))).is_err());
    }

    #[test]
    fn max_pool_ties_go_to_first_row() {
        let (_, arg) = max_pool_columns(&array![[1.0], [1.0], [0.5]]).unwrap();
        assert_eq!(arg, vec![0]);
    }

    #[test]
    fn max_pool_matches_brute_force_scan() {
        let mut rng = rng_for(3, "pool-oracle");
        for _ in 0..100 {
            let m = Array2::from_shape_fn((5, 4), |_| rng.random::<f64>());
            let (fast, _) = max_pool_columns(&m).unwrap();
            for j in 0..4 {
                let slow = (0..5).map(|i| m[[i, j]]).fold(f64::NEG_INFINITY, f64::max);
                assert_eq!(fast[j], slow);
            }
        }
    }

    #[test]
    fn instance_rows_are_stochastic() {
        let (omega, xhat, _, labels) = small_problem(1);
        let pred = forward(&omega, &xhat, &labels).unwrap();
        for row in pred.instance_scores.rows() {
            assert!((row.sum() - 1.0).abs() < 1e-6);
        }
        assert!(pred.bag_scores.iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn single_instance_pooling_is_identity() {
        let (omega, xhat, _, labels) = small_problem(2);
        let one = xhat.slice(ndarray::s![0..1, ..]).to_owned();
        let pred = forward(&omega, &one, &labels).unwrap();
        assert_eq!(pred.pooled, pred.h2a.row(0).to_owned());
    }

    #[test]
    fn bag_scores_invariant_to_instance_order() {
        let (omega, xhat, _, labels) = small_problem(3);
        let pred = forward(&omega, &xhat, &labels).unwrap();
        let mut perm = xhat.clone();
        let tmp = perm.row(0).to_owned();
        let last = perm.row(3).to_owned();
        perm.row_mut(0).assign(&last);
        perm.row_mut(3).assign(&tmp);
        let pred2 = forward(&omega, &perm, &labels).unwrap();
        assert_eq!(pred.bag_scores, pred2.bag_scores);
        assert_eq!(pred.instance_scores.row(0), pred2.instance_scores.row(3));
    }

    #[test]
    fn loss_term_arithmetic() {
        // Both terms vanish when g = y and m = g.
        let y = array![0.25, 0.75];
        assert_eq!(loss_terms(&y, &y, &y.clone()), 0.0);
        // ||y - g||^2 with the consistency term zero.
        let g = array![1.0, 0.0];
        let m = array![1.0, 0.0];
        let y = array![0.0, 1.0];
        assert_eq!(loss_terms(&y, &g, &m), 2.0);
    }

    #[test]
    fn loss_is_non_negative() {
        for seed in 0..10 {
            let (omega, xhat, y, labels) = small_problem(seed);
            let (loss, _) = task_loss(&omega, &xhat, &y, &labels).unwrap();
            assert!(loss >= 0.0);
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        for seed in 0..5 {
            let (omega, xhat, y, labels) = small_problem(seed + 100);
            let report = grad_check(&omega, &xhat, &y, &labels, 1e-5).unwrap();
            assert!(
                report.max_rel_error < 1e-4,
                "seed {seed}: {} at {}",
                report.max_rel_error,
                report.worst_coordinate
            );
        }
    }

    #[test]
    fn grad_check_rejects_bad_step() {
        let (omega, xhat, y, labels) = small_problem(4);
        assert!(grad_check(&omega, &xhat, &y, &labels, 0.0).is_err());
        assert!(grad_check(&omega, &xhat, &y, &labels, -1e-5).is_err());
    }

    #[test]
    fn coarse_step_degrades_finite_differences() {
        let (omega, xhat, y, labels) = small_problem(7);
        let fine = grad_check(&omega, &xhat, &y, &labels, 1e-5).unwrap();
        let coarse = grad_check(&omega, &xhat, &y, &labels, 1e-1).unwrap();
        assert!(coarse.max_rel_error > fine.max_rel_error * 10.0,
            "coarse {} vs fine {}", coarse.max_rel_error, fine.max_rel_error);
    }

    #[test]
    fn linear_region_gradcheck_is_tight() {
        // All pre-activations positive: the trunk is affine, so finite
        // differences agree to float precision on the trunk weights.
        let mut omega = OmegaParams::init(3, 3, 3, 2, 0.1, 5);
        omega.w1.mapv_inplace(f64::abs);
        omega.w2.mapv_inplace(f64::abs);
        omega.b1.mapv_inplace(|v| v.abs() + 0.5);
        omega.b2.mapv_inplace(|v| v.abs() + 0.5);
        let xhat = array![[0.4, 0.3, 0.2]];
        let y = array![1.0, 0.0];
        let report = grad_check(&omega, &xhat, &y, &[0, 1], 1e-5).unwrap();
        assert!(report.max_rel_error < 1e-7, "{}", report.max_rel_error);
    }

    #[test]
    fn shape_errors_are_reported() {
        let (omega, _, y, labels) = small_problem(11);
        let bad = Array2::zeros((2, 3));
        assert!(matches!(
            task_loss(&omega, &bad, &y, &labels),
            Err(Error::ShapeMismatch(_))
        ));
        let good = Array2::zeros((2, 8));
        let short_y = array![1.0];
        assert!(matches!(
            task_loss(&omega, &good, &short_y, &labels),
            Err(Error::ShapeMismatch(_))
        ));
        let nan = Array2::from_elem((2, 8), f64::NAN);
        assert!(matches!(
            forward(&omega, &nan, &labels),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn elementwise_product_and_scaled_add() {
        let a = OmegaParams::init(2, 2, 2, 2, 0.01, 1);
        let mut ones = a.zeros_like();
        for t in ones.tensors_mut() {
            for v in t {
                *v = 1.0;
            }
        }
        let prod = a.elementwise_mul(&ones).unwrap();
        assert_eq!(prod, a);
        let mut acc = a.zeros_like();
        acc.scaled_add(2.0, &a);
        acc.scaled_add(-2.0, &a);
        assert!(acc.flat_iter().all(|v| v == 0.0));
    }

    #[test]
    fn checkpoint_round_trips_with_checksum() {
        let a = OmegaParams::init(4, 3, 3, 5, 0.05, 9);
        let text = a.to_text();
        let b = OmegaParams::parse(&text).unwrap();
        assert_eq!(a, b);
        let corrupted = text.replace("w2", "wX");
        assert!(OmegaParams::parse(&corrupted).is_err());
    }
}
