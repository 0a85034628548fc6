//! Feedforward relevance scorer and the pairwise hinge objective, with
//! hand-written backpropagation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Hidden layer widths of the scoring head.
pub const HIDDEN_SIZES: [usize; 2] = [100, 10];

/// Dense layer, `weights` stored row-major as `outputs × inputs`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Layer {
    fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
        }
    }

    fn forward(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend(self.weights.chunks_exact(self.inputs).zip(&self.bias).map(|(row, b)| {
            row.iter().zip(x).fold(*b, |acc, (w, v)| acc + w * v)
        }));
    }
}

/// Weights of an MLP with ReLU after every layer but the last, which is a
/// single linear output unit. A gradient has the same shape.
#[derive(Debug, Clone, PartialEq)]
pub struct ScorerParams {
    pub layers: Vec<Layer>,
}

impl ScorerParams {
    /// All-zero parameters for layer sizes `[input, hidden.., 1]`.
    pub fn zeros(sizes: &[usize]) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) || *sizes.last().unwrap() != 1 {
            return Err(Error::Shape(format!("invalid layer sizes {sizes:?}")));
        }
        Ok(Self {
            layers: sizes.windows(2).map(|w| Layer::zeros(w[0], w[1])).collect(),
        })
    }

    /// Weights uniform in `[-a, a]` with `a = scale * sqrt(6 / (fan_in + fan_out))`;
    /// biases zero.
    pub fn init(input_dim: usize, hidden: &[usize], scale: f64, seed: u64) -> Result<Self> {
        let mut sizes = vec![input_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(1);
        let mut params = Self::zeros(&sizes)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for layer in &mut params.layers {
            let a = scale * (6.0 / (layer.inputs + layer.outputs) as f64).sqrt();
            for w in &mut layer.weights {
                *w = rng.random_range(-1.0..=1.0) * a;
            }
        }
        Ok(params)
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![self.input_dim()];
        s.extend(self.layers.iter().map(|l| l.outputs));
        s
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    /// Parameters flattened layer by layer, weights before biases.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            out.extend_from_slice(&l.weights);
            out.extend_from_slice(&l.bias);
        }
        out
    }

    /// Inverse of [`ScorerParams::flatten`] for the given layer sizes.
    pub fn unflatten(sizes: &[usize], values: &[f64]) -> Result<Self> {
        let mut params = Self::zeros(sizes)?;
        if values.len() != params.num_params() {
            return Err(Error::Shape(format!(
                "{} values for {} parameters",
                values.len(),
                params.num_params()
            )));
        }
        let mut it = values.iter().copied();
        for l in &mut params.layers {
            for w in l.weights.iter_mut().chain(l.bias.iter_mut()) {
                *w = it.next().unwrap();
            }
        }
        Ok(params)
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(&l.bias).all(|v| v.is_finite()))
    }

    /// `self -= rate * grad`.
    pub fn descend(&mut self, grad: &ScorerParams, rate: f64) {
        for (l, g) in self.layers.iter_mut().zip(&grad.layers) {
            for (w, d) in l.weights.iter_mut().zip(&g.weights) {
                *w -= rate * d;
            }
            for (b, d) in l.bias.iter_mut().zip(&g.bias) {
                *b -= rate * d;
            }
        }
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::Shape(format!(
                "feature vector has {} components, scorer expects {}",
                x.len(),
                self.input_dim()
            )));
        }
        Ok(())
    }

    /// Relevance score of one feature vector.
    pub fn score(&self, x: &[f64]) -> Result<f64> {
        self.check_input(x)?;
        Ok(self.forward(x).output())
    }

    fn forward(&self, x: &[f64]) -> Activations {
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x.to_vec());
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let mut out = Vec::with_capacity(layer.outputs);
            layer.forward(&acts[i], &mut out);
            if i < last {
                for v in &mut out {
                    *v = v.max(0.0);
                }
            }
            acts.push(out);
        }
        Activations { acts }
    }

    /// Adds `d_output * ∂score/∂θ` at the activations of one example.
    fn backward(&self, acts: &Activations, d_output: f64, grad: &mut ScorerParams) {
        let mut delta = vec![d_output];
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let input = &acts.acts[i];
            let g = &mut grad.layers[i];
            for (o, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                g.bias[o] += d;
                let row = &mut g.weights[o * layer.inputs..(o + 1) * layer.inputs];
                for (w, &v) in row.iter_mut().zip(input) {
                    *w += d * v;
                }
            }
            if i == 0 {
                break;
            }
            // Post-ReLU activations: a unit with output 0 passes no gradient,
            // which also fixes the subgradient at the kink to 0.
            let mut prev = vec![0.0; layer.inputs];
            for (o, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                let row = &layer.weights[o * layer.inputs..(o + 1) * layer.inputs];
                for (p, &w) in prev.iter_mut().zip(row) {
                    *p += d * w;
                }
            }
            for (p, &a) in prev.iter_mut().zip(input) {
                if a <= 0.0 {
                    *p = 0.0;
                }
            }
            delta = prev;
        }
    }
}

struct Activations {
    acts: Vec<Vec<f64>>,
}

impl Activations {
    fn output(&self) -> f64 {
        self.acts.last().unwrap()[0]
    }
}

/// `max(0, margin - (s_pos - s_neg))`.
pub fn hinge_loss(s_pos: f64, s_neg: f64, margin: f64) -> f64 {
    (margin - (s_pos - s_neg)).max(0.0)
}

/// A triplet resolved to feature vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct TripletFeatures {
    pub pos: Vec<f64>,
    pub neg: Vec<f64>,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainOptions {
    pub margin: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Weight each triplet's loss by its confidence.
    pub noise_aware: bool,
    /// Set from the pipeline seed, not read from config.
    #[serde(skip)]
    pub seed: u64,
    /// Multiplier on the uniform init bound.
    pub init_scale: f64,
    pub hidden_sizes: Vec<usize>,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            margin: 1.0,
            learning_rate: 1e-3,
            epochs: 20,
            batch_size: 32,
            noise_aware: false,
            seed: 0,
            init_scale: 1.0,
            hidden_sizes: HIDDEN_SIZES.to_vec(),
        }
    }
}

impl TrainOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.margin > 0.0 && self.margin.is_finite()) {
            return Err(Error::config("margin", "must be positive"));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("learning_rate", "must be non-negative"));
        }
        if self.epochs == 0 {
            return Err(Error::config("epochs", "must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be positive"));
        }
        if !(self.init_scale > 0.0 && self.init_scale.is_finite()) {
            return Err(Error::config("init_scale", "must be positive"));
        }
        if self.hidden_sizes.contains(&0) {
            return Err(Error::config("hidden_sizes", "layers must be non-empty"));
        }
        Ok(())
    }

    fn weight(&self, t: &TripletFeatures) -> f64 {
        if self.noise_aware {
            t.confidence
        } else {
            1.0
        }
    }
}

/// Mean (optionally confidence-weighted) hinge loss of a batch. The weights
/// are not renormalized.
pub fn batch_loss(params: &ScorerParams, batch: &[TripletFeatures], opts: &TrainOptions) -> Result<f64> {
    if batch.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for t in batch {
        let l = hinge_loss(params.score(&t.pos)?, params.score(&t.neg)?, opts.margin);
        total += l * opts.weight(t);
    }
    Ok(total / batch.len() as f64)
}

/// Exact gradient of [`batch_loss`], accumulated in batch order.
///
/// Triplets whose margin is met contribute nothing; at the hinge kink the
/// subgradient is 0.
pub fn gradient(params: &ScorerParams, batch: &[TripletFeatures], opts: &TrainOptions) -> Result<ScorerParams> {
    let mut grad = ScorerParams::zeros(&params.sizes())?;
    if batch.is_empty() {
        return Ok(grad);
    }
    let n = batch.len() as f64;
    for t in batch {
        params.check_input(&t.pos)?;
        params.check_input(&t.neg)?;
        let pos = params.forward(&t.pos);
        let neg = params.forward(&t.neg);
        if opts.margin - (pos.output() - neg.output()) > 0.0 {
            let w = opts.weight(t) / n;
            params.backward(&pos, -w, &mut grad);
            params.backward(&neg, w, &mut grad);
        }
    }
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hinge_examples() {
        assert_eq!(hinge_loss(3.0, 1.0, 1.0), 0.0);
        assert!((hinge_loss(0.8, 0.5, 1.0) - 0.7).abs() < 1e-15);
        assert_eq!(hinge_loss(0.4, 0.4, 1.0), 1.0);
    }

    #[test]
    fn zero_weights_score_zero() {
        let p = ScorerParams::zeros(&[5, 100, 10, 1]).unwrap();
        assert_eq!(p.score(&[1.0, -2.0, 3.0, 0.5, 9.0]).unwrap(), 0.0);
    }

    #[test]
    fn hand_set_network() {
        // 2 -> 2 -> 1: h = relu([1 2; -1 1] x + [0.5, -3]), out = [2, 4] h + 1.
        let mut p = ScorerParams::zeros(&[2, 2, 1]).unwrap();
        p.layers[0].weights = vec![1.0, 2.0, -1.0, 1.0];
        p.layers[0].bias = vec![0.5, -3.0];
        p.layers[1].weights = vec![2.0, 4.0];
        p.layers[1].bias = vec![1.0];
        // x = (1, 1): pre = (3.5, -3) -> h = (3.5, 0) -> out = 8
        assert_eq!(p.score(&[1.0, 1.0]).unwrap(), 8.0);
        // x = (-1, 3): pre = (5.5, 1) -> h = (5.5, 1) -> out = 16
        assert_eq!(p.score(&[-1.0, 3.0]).unwrap(), 16.0);
    }

    #[test]
    fn dead_relu_contributes_nothing() {
        let mut p = ScorerParams::zeros(&[1, 1, 1]).unwrap();
        p.layers[0].weights = vec![1.0];
        p.layers[1].weights = vec![5.0];
        assert_eq!(p.score(&[-2.0]).unwrap(), 0.0);
        let batch = [TripletFeatures {
            pos: vec![-2.0],
            neg: vec![-1.0],
            confidence: 1.0,
        }];
        let g = gradient(&p, &batch, &TrainOptions::default()).unwrap();
        assert_eq!(g.layers[0].weights, [0.0]);
        assert_eq!(g.layers[1].weights, [0.0]);
    }

    #[test]
    fn shape_mismatch() {
        let p = ScorerParams::zeros(&[3, 2, 1]).unwrap();
        assert!(matches!(p.score(&[1.0]), Err(Error::Shape(_))));
    }

    fn linear(w: f64) -> ScorerParams {
        let mut p = ScorerParams::zeros(&[1, 1]).unwrap();
        p.layers[0].weights = vec![w];
        p
    }

    #[test]
    fn batch_loss_weighting() {
        // w = 1: scores equal inputs. Losses 0.4 and 0.8 with margin 1.
        let p = linear(1.0);
        let batch = [
            TripletFeatures {
                pos: vec![0.6],
                neg: vec![0.0],
                confidence: 1.0,
            },
            TripletFeatures {
                pos: vec![0.2],
                neg: vec![0.0],
                confidence: 0.5,
            },
        ];
        let mut opts = TrainOptions {
            noise_aware: true,
            ..Default::default()
        };
        assert!((batch_loss(&p, &batch, &opts).unwrap() - 0.4).abs() < 1e-15);
        opts.noise_aware = false;
        assert!((batch_loss(&p, &batch, &opts).unwrap() - 0.6).abs() < 1e-15);
    }

    #[test]
    fn satisfied_margins_give_zero_loss_and_gradient() {
        let p = linear(1.0);
        let batch = [TripletFeatures {
            pos: vec![3.0],
            neg: vec![1.0],
            confidence: 0.3,
        }];
        let opts = TrainOptions::default();
        assert_eq!(batch_loss(&p, &batch, &opts).unwrap(), 0.0);
        let g = gradient(&p, &batch, &opts).unwrap();
        assert!(g.flatten().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn flatten_round_trip() {
        let p = ScorerParams::init(4, &[3, 2], 1.0, 7).unwrap();
        assert_eq!(ScorerParams::unflatten(&p.sizes(), &p.flatten()).unwrap(), p);
        assert_eq!(p.num_params(), 4 * 3 + 3 + 3 * 2 + 2 + 2 + 1);
    }

    #[test]
    fn init_respects_bound() {
        let p = ScorerParams::init(20, &[100, 10], 1.0, 1).unwrap();
        for l in &p.layers {
            let a = (6.0 / (l.inputs + l.outputs) as f64).sqrt();
            assert!(l.weights.iter().all(|w| w.abs() <= a));
            assert!(l.bias.iter().all(|&b| b == 0.0));
        }
        assert_eq!(p.sizes(), [20, 100, 10, 1]);
    }
}
