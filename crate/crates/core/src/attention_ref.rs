//! Reference implementation of tanh-scored soft attention.
//!
//! Scores are `alpha_ij = tanh(q_i W_a k_j^T + b)`, weights are the row
//! softmax of the scores, and output row `i` is `sum_j w_ij v_j`. Everything is
//! plain `f64` loops in a fixed summation order; this is meant for checking,
//! not for speed.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::rng::SplitMix64;

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::ShapeMismatch("ragged rows".into()));
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data: rows.concat(),
        })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = Self::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                m.data[i * cols + j] = f(i, j);
            }
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    #[inline]
    fn add_at(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] += v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionConfig {
    /// `d x d` bilinear score matrix.
    pub w_a: Matrix,
    /// Scalar bias added to every score.
    pub b: f64,
}

impl AttentionConfig {
    pub fn new(w_a: Matrix, b: f64) -> Result<Self> {
        if w_a.rows() != w_a.cols() {
            return Err(Error::ShapeMismatch(format!(
                "W_a must be square, got {}x{}",
                w_a.rows(),
                w_a.cols()
            )));
        }
        if !w_a.is_finite() || !b.is_finite() {
            return Err(Error::InvalidArgument(
                "attention parameters must be finite".into(),
            ));
        }
        Ok(Self { w_a, b })
    }

    pub fn dim(&self) -> usize {
        self.w_a.rows()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionOperands {
    pub keys: Matrix,
    pub queries: Matrix,
    pub values: Matrix,
}

impl AttentionOperands {
    /// Self-attention over hidden states: keys, queries and values are all `h`.
    pub fn tied(h: Matrix) -> Self {
        Self {
            keys: h.clone(),
            queries: h.clone(),
            values: h,
        }
    }

    fn check(&self, cfg: &AttentionConfig) -> Result<()> {
        let (n, d) = (self.keys.rows(), cfg.dim());
        for (name, m) in [("K", &self.keys), ("Q", &self.queries), ("V", &self.values)] {
            if m.rows() != n || m.cols() != d {
                return Err(Error::ShapeMismatch(format!(
                    "{name} is {}x{}, expected {n}x{d}",
                    m.rows(),
                    m.cols()
                )));
            }
        }
        if n == 0 {
            return Err(Error::ShapeMismatch("empty sequence".into()));
        }
        Ok(())
    }
}

/// `x W y^T` for row vectors `x`, `y`.
fn bilinear(x: &[f64], w: &Matrix, y: &[f64]) -> f64 {
    let mut total = 0.0;
    for (a, xa) in x.iter().enumerate() {
        let mut inner = 0.0;
        for (c, yc) in y.iter().enumerate() {
            inner += w.get(a, c) * yc;
        }
        total += xa * inner;
    }
    total
}

pub fn attention_scores(cfg: &AttentionConfig, keys: &Matrix, queries: &Matrix) -> Result<Matrix> {
    let d = cfg.dim();
    if keys.cols() != d || queries.cols() != d {
        return Err(Error::ShapeMismatch(format!(
            "operand width must be {d}, got K:{} Q:{}",
            keys.cols(),
            queries.cols()
        )));
    }
    Ok(Matrix::from_fn(queries.rows(), keys.rows(), |i, j| {
        (bilinear(queries.row(i), &cfg.w_a, keys.row(j)) + cfg.b).tanh()
    }))
}

/// Softmax of a single vector with the maximum subtracted first.
pub fn softmax(xs: &[f64]) -> Vec<f64> {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = xs.iter().map(|x| (x - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

pub fn softmax_rows(m: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(m.rows(), m.cols());
    for i in 0..m.rows() {
        let row = softmax(m.row(i));
        out.data[i * m.cols..(i + 1) * m.cols].copy_from_slice(&row);
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionOutput {
    pub scores: Matrix,
    pub weights: Matrix,
    pub output: Matrix,
}

pub fn attention_forward(
    cfg: &AttentionConfig,
    ops: &AttentionOperands,
) -> Result<AttentionOutput> {
    ops.check(cfg)?;
    let scores = attention_scores(cfg, &ops.keys, &ops.queries)?;
    let weights = softmax_rows(&scores);
    let (n, d) = (ops.values.rows(), ops.values.cols());
    let output = Matrix::from_fn(weights.rows(), d, |i, c| {
        let mut acc = 0.0;
        for j in 0..n {
            acc += weights.get(i, j) * ops.values.get(j, c);
        }
        acc
    });
    Ok(AttentionOutput {
        scores,
        weights,
        output,
    })
}

/// Pools the rows of `h` into one vector by attending with a single query.
pub fn aggregate_with_query(cfg: &AttentionConfig, h: &Matrix, query: &[f64]) -> Result<Vec<f64>> {
    let d = cfg.dim();
    if h.cols() != d || query.len() != d {
        return Err(Error::ShapeMismatch(format!(
            "expected width {d}, got H:{} q:{}",
            h.cols(),
            query.len()
        )));
    }
    if h.rows() == 0 {
        return Err(Error::ShapeMismatch("empty sequence".into()));
    }
    let scores: Vec<f64> = (0..h.rows())
        .map(|j| (bilinear(query, &cfg.w_a, h.row(j)) + cfg.b).tanh())
        .collect();
    let weights = softmax(&scores);
    let mut out = vec![0.0; d];
    for (j, w) in weights.iter().enumerate() {
        for (c, o) in out.iter_mut().enumerate() {
            *o += w * h.get(j, c);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionGrads {
    pub w_a: Matrix,
    pub b: f64,
    pub keys: Matrix,
    pub queries: Matrix,
    pub values: Matrix,
}

impl AttentionGrads {
    /// Gradient with respect to a shared hidden-state matrix when
    /// `K = Q = V = H`.
    pub fn tied_input(&self) -> Matrix {
        let mut m = self.keys.clone();
        for (i, v) in m.data.iter_mut().enumerate() {
            *v += self.queries.data[i] + self.values.data[i];
        }
        m
    }

    pub fn scaled(mut self, factor: f64) -> Self {
        for m in [
            &mut self.w_a,
            &mut self.keys,
            &mut self.queries,
            &mut self.values,
        ] {
            m.data.iter_mut().for_each(|v| *v *= factor);
        }
        self.b *= factor;
        self
    }
}

/// Backpropagates `upstream = dL/dO` through the weighted sum, the row
/// softmax, the tanh and the bilinear score.
pub fn attention_backward(
    cfg: &AttentionConfig,
    ops: &AttentionOperands,
    upstream: &Matrix,
) -> Result<AttentionGrads> {
    let fwd = attention_forward(cfg, ops)?;
    let (n, d) = (ops.keys.rows(), cfg.dim());
    if upstream.rows() != n || upstream.cols() != d {
        return Err(Error::ShapeMismatch(format!(
            "upstream gradient is {}x{}, expected {n}x{d}",
            upstream.rows(),
            upstream.cols()
        )));
    }
    let w = &fwd.weights;

    let mut d_values = Matrix::zeros(n, d);
    let mut d_weights = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let mut dw = 0.0;
            for c in 0..d {
                dw += upstream.get(i, c) * ops.values.get(j, c);
                d_values.add_at(j, c, w.get(i, j) * upstream.get(i, c));
            }
            d_weights.set(i, j, dw);
        }
    }

    // Through softmax and tanh to the pre-activation scores.
    let mut d_pre = Matrix::zeros(n, n);
    for i in 0..n {
        let mut dot = 0.0;
        for j in 0..n {
            dot += w.get(i, j) * d_weights.get(i, j);
        }
        for j in 0..n {
            let d_alpha = w.get(i, j) * (d_weights.get(i, j) - dot);
            let a = fwd.scores.get(i, j);
            d_pre.set(i, j, d_alpha * (1.0 - a * a));
        }
    }

    let mut d_b = 0.0;
    let mut d_wa = Matrix::zeros(d, d);
    let mut d_queries = Matrix::zeros(n, d);
    let mut d_keys = Matrix::zeros(n, d);
    for i in 0..n {
        for j in 0..n {
            let g = d_pre.get(i, j);
            d_b += g;
            let (q, k) = (ops.queries.row(i), ops.keys.row(j));
            for a in 0..d {
                for c in 0..d {
                    let wac = cfg.w_a.get(a, c);
                    d_wa.add_at(a, c, g * q[a] * k[c]);
                    d_queries.add_at(i, a, g * wac * k[c]);
                    d_keys.add_at(j, c, g * q[a] * wac);
                }
            }
        }
    }

    Ok(AttentionGrads {
        w_a: d_wa,
        b: d_b,
        keys: d_keys,
        queries: d_queries,
        values: d_values,
    })
}

/// Denominator floor for the relative error, so that coordinates whose true
/// gradient is zero (the bias, through the softmax) compare on an absolute
/// scale.
pub const REL_ERR_FLOOR: f64 = 1e-3;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERR_FLOOR)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradientReport {
    pub trials: usize,
    pub coordinates: usize,
    pub max_rel_err: f64,
    pub failures: usize,
    pub step: f64,
    pub tolerance: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradientCheck {
    pub trials: usize,
    pub n_max: usize,
    pub d_max: usize,
    pub step: f64,
    pub tolerance: f64,
    pub seed: u64,
}

impl Default for GradientCheck {
    fn default() -> Self {
        Self {
            trials: 100,
            n_max: 7,
            d_max: 5,
            step: 1e-4,
            tolerance: 1e-5,
            seed: 0,
        }
    }
}

fn uniform(rng: &mut SplitMix64) -> f64 {
    ((rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
}

fn random_matrix(rng: &mut SplitMix64, rows: usize, cols: usize) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| uniform(rng))
}

/// `sum_ij C_ij O_ij`: a random linear scalarization of the output.
fn loss(cfg: &AttentionConfig, ops: &AttentionOperands, weights: &Matrix) -> f64 {
    let out = attention_forward(cfg, ops)
        .expect("shapes checked by caller")
        .output;
    out.as_slice()
        .iter()
        .zip(weights.as_slice())
        .map(|(o, c)| o * c)
        .sum()
}

/// Compares `grad` against central differences on every coordinate of every
/// parameter and operand.
pub fn finite_difference_check_with<G>(check: &GradientCheck, grad: G) -> Result<GradientReport>
where
    G: Fn(&AttentionConfig, &AttentionOperands, &Matrix) -> Result<AttentionGrads>,
{
    if !(check.step > 0.0) {
        return Err(Error::InvalidArgument(
            "finite-difference step must be positive".into(),
        ));
    }
    if check.n_max == 0 || check.d_max == 0 {
        return Err(Error::InvalidArgument(
            "n_max and d_max must be at least 1".into(),
        ));
    }
    let mut rng = SplitMix64::new(check.seed);
    let h = check.step;
    let mut report = GradientReport {
        trials: check.trials,
        coordinates: 0,
        max_rel_err: 0.0,
        failures: 0,
        step: h,
        tolerance: check.tolerance,
        seed: check.seed,
    };
    let record = |analytic: f64, numeric: f64, report: &mut GradientReport| {
        let e = relative_error(analytic, numeric);
        report.coordinates += 1;
        report.max_rel_err = report.max_rel_err.max(e);
        if !(e <= check.tolerance) {
            report.failures += 1;
        }
    };

    for _ in 0..check.trials {
        let n = 1 + rng.below(check.n_max as u64) as usize;
        let d = 1 + rng.below(check.d_max as u64) as usize;
        let cfg = AttentionConfig::new(random_matrix(&mut rng, d, d), uniform(&mut rng))?;
        let ops = AttentionOperands {
            keys: random_matrix(&mut rng, n, d),
            queries: random_matrix(&mut rng, n, d),
            values: random_matrix(&mut rng, n, d),
        };
        let upstream = random_matrix(&mut rng, n, d);
        let g = grad(&cfg, &ops, &upstream)?;

        let central = |plus: f64, minus: f64| (plus - minus) / (2.0 * h);

        for idx in 0..d * d {
            let mut c = cfg.clone();
            c.w_a.data[idx] += h;
            let plus = loss(&c, &ops, &upstream);
            c.w_a.data[idx] -= 2.0 * h;
            let minus = loss(&c, &ops, &upstream);
            record(g.w_a.data[idx], central(plus, minus), &mut report);
        }
        {
            let mut c = cfg.clone();
            c.b += h;
            let plus = loss(&c, &ops, &upstream);
            c.b -= 2.0 * h;
            let minus = loss(&c, &ops, &upstream);
            record(g.b, central(plus, minus), &mut report);
        }
        for which in 0..3 {
            for idx in 0..n * d {
                let mut o = ops.clone();
                fn target(o: &mut AttentionOperands, which: usize) -> &mut Matrix {
                    match which {
                        0 => &mut o.keys,
                        1 => &mut o.queries,
                        _ => &mut o.values,
                    }
                }
                target(&mut o, which).data[idx] += h;
                let plus = loss(&cfg, &o, &upstream);
                target(&mut o, which).data[idx] -= 2.0 * h;
                let minus = loss(&cfg, &o, &upstream);
                let analytic = match which {
                    0 => g.keys.data[idx],
                    1 => g.queries.data[idx],
                    _ => g.values.data[idx],
                };
                record(analytic, central(plus, minus), &mut report);
            }
        }
    }
    Ok(report)
}

pub fn finite_difference_check(check: &GradientCheck) -> Result<GradientReport> {
    finite_difference_check_with(check, attention_backward)
}
