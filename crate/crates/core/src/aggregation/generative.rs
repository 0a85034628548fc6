//! Conditionally independent generative label model.
//!
//! Each labeling function `j` votes (does not abstain) with probability
//! `β_j` and, when it votes, agrees with the true label with probability
//! `α_j`. The class prior `Pr(y = +1) = γ` is fixed. `α` and `β` are fit by
//! projected gradient ascent on the mean marginal log-likelihood of the
//! observed label rows; keeping `α_j > 0.5` removes the label-swap symmetry.
//!
//! Rows only enter the objective through their pattern counts, so the
//! likelihood and its gradient are sums over at most `3^k` distinct rows in a
//! fixed (sorted) order. This makes both independent of row order and of
//! the number of worker threads, bit for bit.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labeling::{LabelMatrix, WeakLabel};

/// Distance kept from the edges of the parameter box.
pub const PROJECTION_MARGIN: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerativeParams {
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub gamma: f64,
    /// Labeling-function names the parameters were fit on, in column order.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub functions: Vec<String>,
}

impl GenerativeParams {
    /// Checks `α ∈ [0.5, 1]`, `β ∈ [0, 1]`, `γ ∈ (0, 1)`. The tighter
    /// projection box is only imposed by [`GenerativeParams::project`].
    pub fn new(alpha: Vec<f64>, beta: Vec<f64>, gamma: f64) -> Result<Self> {
        let params = Self {
            alpha,
            beta,
            gamma,
            functions: Vec::new(),
        };
        params.check()?;
        Ok(params)
    }

    fn check(&self) -> Result<()> {
        if self.alpha.is_empty() || self.alpha.len() != self.beta.len() {
            return Err(Error::Shape(format!(
                "{} alpha values and {} beta values",
                self.alpha.len(),
                self.beta.len()
            )));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::config("gamma", format!("{} is not in (0, 1)", self.gamma)));
        }
        if let Some(a) = self.alpha.iter().find(|a| !(0.5..=1.0).contains(*a)) {
            return Err(Error::config("alpha", format!("{a} is not in [0.5, 1]")));
        }
        if let Some(b) = self.beta.iter().find(|b| !(0.0..=1.0).contains(*b)) {
            return Err(Error::config("beta", format!("{b} is not in [0, 1]")));
        }
        Ok(())
    }

    pub fn k(&self) -> usize {
        self.alpha.len()
    }

    /// Clamps into `α ∈ [0.5 + δ, 1 − δ]`, `β ∈ [δ, 1 − δ]`.
    pub fn project(&mut self) {
        let d = PROJECTION_MARGIN;
        for a in &mut self.alpha {
            *a = a.clamp(0.5 + d, 1.0 - d);
        }
        for b in &mut self.beta {
            *b = b.clamp(d, 1.0 - d);
        }
    }

    pub fn in_box(&self) -> bool {
        let d = PROJECTION_MARGIN;
        self.alpha.iter().all(|a| (0.5 + d..=1.0 - d).contains(a))
            && self.beta.iter().all(|b| (d..=1.0 - d).contains(b))
    }

    pub(crate) fn check_columns(&self, matrix: &LabelMatrix) -> Result<()> {
        if self.k() != matrix.k() {
            return Err(Error::Shape(format!(
                "parameters cover {} labeling functions, matrix has {}",
                self.k(),
                matrix.k()
            )));
        }
        if !self.functions.is_empty() && self.functions != matrix.functions {
            return Err(Error::Shape(format!(
                "parameters fit on functions {:?}, matrix has {:?}",
                self.functions, matrix.functions
            )));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("params serialize")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let params: Self = serde_json::from_str(text).map_err(|e| Error::Format(format!("params JSON: {e}")))?;
        params.check()?;
        Ok(params)
    }
}

/// Per-class log terms of one row.
///
/// Returns `(shared, log_pos, log_neg)` where `shared` collects the abstain
/// factors `ln(1 − β_j)` common to both classes, and `log_pos`/`log_neg` are
/// the log prior plus the voting factors under `y = +1` / `y = −1`.
fn row_terms(params: &GenerativeParams, row: &[WeakLabel]) -> (f64, f64, f64) {
    let mut shared = 0.0;
    let mut log_pos = params.gamma.ln();
    let mut log_neg = (1.0 - params.gamma).ln();
    for ((&label, &a), &b) in row.iter().zip(&params.alpha).zip(&params.beta) {
        match label {
            WeakLabel::Abstain => shared += (1.0 - b).ln(),
            WeakLabel::Positive => {
                log_pos += b.ln() + a.ln();
                log_neg += b.ln() + (1.0 - a).ln();
            }
            WeakLabel::Negative => {
                log_pos += b.ln() + (1.0 - a).ln();
                log_neg += b.ln() + a.ln();
            }
        }
    }
    (shared, log_pos, log_neg)
}

fn log_add_exp(a: f64, b: f64) -> f64 {
    let m = a.max(b);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// `log Pr(λ_1..λ_k)` of one row, marginalizing the true label.
pub fn row_log_likelihood(params: &GenerativeParams, row: &[WeakLabel]) -> f64 {
    let (shared, lp, ln) = row_terms(params, row);
    shared + log_add_exp(lp, ln)
}

/// `Pr(y = +1 | λ_1..λ_k)`; exactly `γ` when every function abstains.
pub fn posterior(params: &GenerativeParams, row: &[WeakLabel]) -> f64 {
    if row.iter().all(|l| l.is_abstain()) {
        return params.gamma;
    }
    let (_, lp, ln) = row_terms(params, row);
    1.0 / (1.0 + (ln - lp).exp())
}

/// Distinct label rows with their multiplicities, in sorted order.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelHistogram {
    pub k: usize,
    pub n: u64,
    pub patterns: Vec<(Vec<WeakLabel>, u64)>,
}

const HISTOGRAM_CHUNK: usize = 4096;

impl LabelHistogram {
    pub fn from_matrix(matrix: &LabelMatrix) -> Self {
        let rows: Vec<&[WeakLabel]> = matrix.rows().collect();
        let counts = rows
            .par_chunks(HISTOGRAM_CHUNK)
            .map(|chunk| {
                let mut m: BTreeMap<Vec<WeakLabel>, u64> = BTreeMap::new();
                for row in chunk {
                    *m.entry(row.to_vec()).or_insert(0) += 1;
                }
                m
            })
            .reduce(BTreeMap::new, |mut a, b| {
                for (row, c) in b {
                    *a.entry(row).or_insert(0) += c;
                }
                a
            });
        Self {
            k: matrix.k(),
            n: rows.len() as u64,
            patterns: counts.into_iter().collect(),
        }
    }

    fn mean_of(&self, mut f: impl FnMut(&[WeakLabel]) -> f64) -> f64 {
        let total: f64 = self
            .patterns
            .iter()
            .map(|(row, c)| *c as f64 * f(row))
            .sum();
        total / self.n as f64
    }
}

/// Mean marginal log-likelihood of the matrix rows.
pub fn marginal_log_likelihood(params: &GenerativeParams, matrix: &LabelMatrix) -> f64 {
    histogram_log_likelihood(params, &LabelHistogram::from_matrix(matrix))
}

fn histogram_log_likelihood(params: &GenerativeParams, hist: &LabelHistogram) -> f64 {
    hist.mean_of(|row| row_log_likelihood(params, row))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamGradient {
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
}

impl ParamGradient {
    pub fn is_finite(&self) -> bool {
        self.alpha.iter().chain(&self.beta).all(|g| g.is_finite())
    }
}

/// Gradient of [`marginal_log_likelihood`] with respect to `α` and `β`.
pub fn gradient(params: &GenerativeParams, matrix: &LabelMatrix) -> ParamGradient {
    histogram_gradient(params, &LabelHistogram::from_matrix(matrix))
}

fn histogram_gradient(params: &GenerativeParams, hist: &LabelHistogram) -> ParamGradient {
    let k = params.k();
    let mut ga = vec![0.0; k];
    let mut gb = vec![0.0; k];
    for (row, count) in &hist.patterns {
        let c = *count as f64;
        // Weights of the two classes under the posterior.
        let w_pos = posterior(params, row);
        let w_neg = 1.0 - w_pos;
        for (j, &label) in row.iter().enumerate() {
            let (a, b) = (params.alpha[j], params.beta[j]);
            match label {
                WeakLabel::Abstain => gb[j] -= c / (1.0 - b),
                WeakLabel::Positive => {
                    gb[j] += c / b;
                    ga[j] += c * (w_pos / a - w_neg / (1.0 - a));
                }
                WeakLabel::Negative => {
                    gb[j] += c / b;
                    ga[j] += c * (w_neg / a - w_pos / (1.0 - a));
                }
            }
        }
    }
    let n = hist.n as f64;
    ParamGradient {
        alpha: ga.into_iter().map(|g| g / n).collect(),
        beta: gb.into_iter().map(|g| g / n).collect(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitOptions {
    /// Initial step of every backtracking search.
    pub step_size: f64,
    pub max_iterations: usize,
    /// Stop once an accepted step improves the objective by less than this.
    pub tolerance: f64,
    pub alpha_init: f64,
    pub beta_init: f64,
    /// Reserved for randomized initialization; the default start is
    /// deterministic and ignores it.
    pub seed: u64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            step_size: 1.0,
            max_iterations: 5000,
            tolerance: 1e-8,
            alpha_init: 0.7,
            beta_init: 0.5,
            seed: 0,
        }
    }
}

impl FitOptions {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("step_size", self.step_size),
            ("tolerance", self.tolerance),
            ("alpha_init", self.alpha_init),
            ("beta_init", self.beta_init),
        ];
        for (field, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(field, format!("{v} must be positive")));
            }
        }
        if self.max_iterations == 0 {
            return Err(Error::config("max_iterations", "must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub iteration: usize,
    pub objective: f64,
    pub step_size: f64,
}

/// Objective after initialization (iteration 0) and after every accepted step.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FitTrace {
    pub entries: Vec<TraceEntry>,
    pub converged: bool,
}

impl FitTrace {
    pub fn is_non_decreasing(&self) -> bool {
        self.entries.windows(2).all(|w| w[1].objective >= w[0].objective)
    }

    pub fn final_objective(&self) -> f64 {
        self.entries.last().map_or(f64::NAN, |e| e.objective)
    }

    pub fn to_csv(&self, comment: Option<&str>) -> String {
        let mut out = String::new();
        if let Some(c) = comment {
            let _ = writeln!(out, "# {c}");
        }
        out.push_str("iteration,objective,step_size\n");
        for e in &self.entries {
            let _ = writeln!(out, "{},{:?},{:?}", e.iteration, e.objective, e.step_size);
        }
        out
    }
}

/// Smallest step tried before a backtracking search gives up.
const MIN_STEP: f64 = 1e-14;

/// Maximizes the mean marginal log-likelihood over `α` and `β` with `γ`
/// held fixed.
///
/// Every iteration steps along the full-batch gradient, projects onto the
/// box and halves the step until the objective does not decrease. The fit
/// stops when an accepted step gains less than `opts.tolerance`, when no
/// step size above `1e-14` is acceptable, or after `opts.max_iterations`.
pub fn fit_generative_model(
    matrix: &LabelMatrix,
    gamma: f64,
    opts: &FitOptions,
) -> Result<(GenerativeParams, FitTrace)> {
    opts.validate()?;
    if matrix.n() == 0 || matrix.k() == 0 {
        return Err(Error::Empty("label matrix"));
    }
    let k = matrix.k();
    let mut params = GenerativeParams::new(
        vec![opts.alpha_init.clamp(0.5, 1.0); k],
        vec![opts.beta_init.clamp(0.0, 1.0); k],
        gamma,
    )?;
    params.project();
    params.functions = matrix.functions.clone();

    let hist = LabelHistogram::from_matrix(matrix);
    let mut objective = histogram_log_likelihood(&params, &hist);
    if !objective.is_finite() {
        return Err(Error::NonFinite(format!("initial objective {objective}")));
    }
    let mut trace = FitTrace {
        entries: vec![TraceEntry {
            iteration: 0,
            objective,
            step_size: 0.0,
        }],
        converged: false,
    };

    for iteration in 1..=opts.max_iterations {
        let grad = histogram_gradient(&params, &hist);
        if !grad.is_finite() {
            return Err(Error::NonFinite(format!(
                "gradient at iteration {iteration}: {grad:?}"
            )));
        }
        let mut step = opts.step_size;
        let accepted = loop {
            let mut candidate = params.clone();
            for (a, g) in candidate.alpha.iter_mut().zip(&grad.alpha) {
                *a += step * g;
            }
            for (b, g) in candidate.beta.iter_mut().zip(&grad.beta) {
                *b += step * g;
            }
            candidate.project();
            let value = histogram_log_likelihood(&candidate, &hist);
            if value >= objective {
                break Some((candidate, value));
            }
            step *= 0.5;
            if step < MIN_STEP {
                break None;
            }
        };
        let Some((candidate, value)) = accepted else {
            trace.converged = true;
            break;
        };
        let gain = value - objective;
        params = candidate;
        objective = value;
        trace.entries.push(TraceEntry {
            iteration,
            objective,
            step_size: step,
        });
        if gain < opts.tolerance {
            trace.converged = true;
            break;
        }
    }
    Ok((params, trace))
}
