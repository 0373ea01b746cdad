//! Sigmoid multilayer perceptron trained online by backpropagation with momentum.
//!
//! Per pattern `p` the error is `e_p = ½ Σ_k (d_pk − y_pk)²`. After each
//! pattern every weight moves by
//!
//! ```text
//! Δw(t+1) = −η · ∂e_p/∂w + α · Δw(t)
//! ```
//!
//! and training stops once the epoch-mean error changes by less than `ε`
//! between consecutive epochs (or `max_epochs` is reached).

use num_traits::Num;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::Scalar;

#[derive(Debug, Error, PartialEq)]
pub enum MlpError {
    #[error("bad architecture: {0}")]
    BadArchitecture(String),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error("training diverged: non-finite error in epoch {epoch}")]
    NonFiniteError { epoch: usize },
    #[error("invalid training configuration: {0}")]
    BadConfig(String),
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig<T> {
    pub learning_rate: T,
    pub momentum: T,
    /// Stop when consecutive epoch-mean errors differ by less than this.
    pub epsilon: T,
    pub max_epochs: usize,
    pub seed: u64,
    /// Initial weights are uniform in `[-init_scale, init_scale]`.
    pub init_scale: T,
}

impl<T: Scalar> Default for TrainConfig<T> {
    fn default() -> Self {
        TrainConfig {
            learning_rate: T::of(0.3),
            momentum: T::of(0.9),
            epsilon: T::of(1e-6),
            max_epochs: 500,
            seed: 7,
            init_scale: T::of(0.5),
        }
    }
}

impl<T: Scalar> TrainConfig<T> {
    pub fn validate(&self) -> Result<(), MlpError> {
        let bad = |m: String| Err(MlpError::BadConfig(m));
        if !(self.learning_rate > T::zero()) {
            return bad(format!("learning rate {} must be > 0", self.learning_rate));
        }
        if !(self.momentum >= T::zero() && self.momentum < T::one()) {
            return bad(format!("momentum {} must be in [0, 1)", self.momentum));
        }
        if !(self.epsilon > T::zero()) {
            return bad(format!("epsilon {} must be > 0", self.epsilon));
        }
        if self.max_epochs == 0 {
            return bad("max_epochs must be > 0".into());
        }
        if !(self.init_scale > T::zero()) {
            return bad(format!("init scale {} must be > 0", self.init_scale));
        }
        Ok(())
    }
}

/// One input/target pair; `target` is one-hot for classification.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingSample<T> {
    pub input: Vec<T>,
    pub target: Vec<T>,
}

/// Per-layer weight matrices, `outputs × (inputs + 1)`, row-major, bias last.
pub type LayerWeights<T> = Vec<Vec<T>>;

#[derive(Clone, Debug, PartialEq)]
pub struct MlpModel<T> {
    layer_sizes: Vec<usize>,
    weights: LayerWeights<T>,
    momentum: LayerWeights<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport<T> {
    pub epochs: usize,
    pub final_error: T,
    /// Epoch-mean error after each epoch.
    pub error_trace: Vec<T>,
}

#[inline]
pub fn sigmoid<T: Scalar>(z: T) -> T {
    T::one() / (T::one() + (-z).exp())
}

/// Layers whose width exceeds three times the previous level's.
pub fn architecture_warnings(layer_sizes: &[usize]) -> Vec<String> {
    let hidden = layer_sizes.len().saturating_sub(1);
    (1..hidden)
        .filter(|&i| layer_sizes[i] > 3 * layer_sizes[i - 1])
        .map(|i| {
            format!(
                "hidden level {i} has {} nodes, more than triple the {} of the level before it",
                layer_sizes[i],
                layer_sizes[i - 1]
            )
        })
        .collect()
}

fn check_architecture(layer_sizes: &[usize]) -> Result<(), MlpError> {
    if layer_sizes.len() < 2 {
        return Err(MlpError::BadArchitecture(format!(
            "need at least input and output levels, got {layer_sizes:?}"
        )));
    }
    if layer_sizes.contains(&0) {
        return Err(MlpError::BadArchitecture(format!(
            "every level needs at least one node, got {layer_sizes:?}"
        )));
    }
    Ok(())
}

fn check_len(expected: usize, found: usize) -> Result<(), MlpError> {
    if expected == found {
        Ok(())
    } else {
        Err(MlpError::DimensionMismatch { expected, found })
    }
}

/// `e_p = ½ Σ_k (d_k − y_k)²`.
///
/// Generic over any numeric ring so it can also be evaluated exactly, e.g.
/// with rationals.
pub fn sample_error<T: Copy + Num>(target: &[T], output: &[T]) -> Result<T, MlpError> {
    check_len(target.len(), output.len())?;
    let sum = target
        .iter()
        .zip(output)
        .fold(T::zero(), |acc, (&d, &y)| acc + (d - y) * (d - y));
    Ok(sum / (T::one() + T::one()))
}

/// One momentum step: `Δw(t+1) = −η·g + α·Δw(t)`.
#[inline]
pub fn momentum_step<T: Copy + Num>(learning_rate: T, gradient: T, momentum: T, previous: T) -> T {
    T::zero() - learning_rate * gradient + momentum * previous
}

/// Index of the largest score, lowest index on ties.
pub fn argmax<T: Scalar>(scores: &[T]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

impl<T: Scalar> MlpModel<T> {
    /// Uniform random weights from a ChaCha8 stream seeded with `cfg.seed`;
    /// momentum buffers start at zero.
    pub fn init(layer_sizes: &[usize], cfg: &TrainConfig<T>) -> Result<Self, MlpError> {
        check_architecture(layer_sizes)?;
        for w in architecture_warnings(layer_sizes) {
            log::warn!("{w}");
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let scale = cfg.init_scale.as_f64();
        let weights: LayerWeights<T> = layer_sizes
            .windows(2)
            .map(|pair| {
                (0..pair[1] * (pair[0] + 1))
                    .map(|_| T::of(rng.gen_range(-scale..=scale)))
                    .collect()
            })
            .collect();
        Ok(Self::with_zero_momentum(layer_sizes.to_vec(), weights))
    }

    /// Builds a model from explicit weights, validating shapes and finiteness.
    pub fn from_weights(layer_sizes: &[usize], weights: LayerWeights<T>) -> Result<Self, MlpError> {
        check_architecture(layer_sizes)?;
        check_len(layer_sizes.len() - 1, weights.len())?;
        for (pair, w) in layer_sizes.windows(2).zip(&weights) {
            check_len(pair[1] * (pair[0] + 1), w.len())?;
            if w.iter().any(|v| !v.is_finite()) {
                return Err(MlpError::BadArchitecture("non-finite weight".into()));
            }
        }
        Ok(Self::with_zero_momentum(layer_sizes.to_vec(), weights))
    }

    fn with_zero_momentum(layer_sizes: Vec<usize>, weights: LayerWeights<T>) -> Self {
        let momentum = weights.iter().map(|w| vec![T::zero(); w.len()]).collect();
        MlpModel {
            layer_sizes,
            weights,
            momentum,
        }
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn input_size(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_size(&self) -> usize {
        *self.layer_sizes.last().expect("at least two levels")
    }

    pub fn weights(&self) -> &LayerWeights<T> {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut LayerWeights<T> {
        &mut self.weights
    }

    pub fn momentum(&self) -> &LayerWeights<T> {
        &self.momentum
    }

    /// Activations of every level, input first.
    fn activations(&self, input: &[T]) -> Result<Vec<Vec<T>>, MlpError> {
        check_len(self.input_size(), input.len())?;
        let mut acts = Vec::with_capacity(self.layer_sizes.len());
        acts.push(input.to_vec());
        for (l, w) in self.weights.iter().enumerate() {
            let (n_in, n_out) = (self.layer_sizes[l], self.layer_sizes[l + 1]);
            let prev = &acts[l];
            let next: Vec<T> = (0..n_out)
                .map(|j| {
                    let row = &w[j * (n_in + 1)..(j + 1) * (n_in + 1)];
                    let z = row[..n_in]
                        .iter()
                        .zip(prev)
                        .fold(row[n_in], |acc, (&wj, &a)| acc + wj * a);
                    sigmoid(z)
                })
                .collect();
            acts.push(next);
        }
        Ok(acts)
    }

    pub fn forward(&self, input: &[T]) -> Result<Vec<T>, MlpError> {
        Ok(self.activations(input)?.pop().expect("output level"))
    }

    /// Scores and arg-max class.
    pub fn predict(&self, input: &[T]) -> Result<(Vec<T>, usize), MlpError> {
        let scores = self.forward(input)?;
        let best = argmax(&scores);
        Ok((scores, best))
    }

    /// Exact gradient of `e_p` with respect to every weight; does not touch the model.
    pub fn backward(&self, sample: &TrainingSample<T>) -> Result<LayerWeights<T>, MlpError> {
        self.backward_with_error(sample).map(|(g, _)| g)
    }

    fn backward_with_error(
        &self,
        sample: &TrainingSample<T>,
    ) -> Result<(LayerWeights<T>, T), MlpError> {
        check_len(self.output_size(), sample.target.len())?;
        let acts = self.activations(&sample.input)?;
        let output = acts.last().expect("output level");
        let error = sample_error(&sample.target, output)?;

        let mut grads: LayerWeights<T> = self
            .weights
            .iter()
            .map(|w| vec![T::zero(); w.len()])
            .collect();
        // δ at the output: (y − d)·y·(1 − y).
        let mut delta: Vec<T> = output
            .iter()
            .zip(&sample.target)
            .map(|(&y, &d)| (y - d) * y * (T::one() - y))
            .collect();
        for l in (0..self.weights.len()).rev() {
            let n_in = self.layer_sizes[l];
            let prev = &acts[l];
            let w = &self.weights[l];
            let g = &mut grads[l];
            for (j, &dj) in delta.iter().enumerate() {
                let row = j * (n_in + 1);
                for (i, &a) in prev.iter().enumerate() {
                    g[row + i] = dj * a;
                }
                g[row + n_in] = dj;
            }
            if l > 0 {
                delta = (0..n_in)
                    .map(|i| {
                        let back: T = delta
                            .iter()
                            .enumerate()
                            .map(|(j, &dj)| w[j * (n_in + 1) + i] * dj)
                            .sum();
                        back * prev[i] * (T::one() - prev[i])
                    })
                    .collect();
            }
        }
        Ok((grads, error))
    }

    /// `Δw ← −η·g + α·Δw;  w ← w + Δw`.
    pub fn update_weights(
        &mut self,
        gradient: &LayerWeights<T>,
        cfg: &TrainConfig<T>,
    ) -> Result<(), MlpError> {
        check_len(self.weights.len(), gradient.len())?;
        for (w, g) in self.weights.iter().zip(gradient) {
            check_len(w.len(), g.len())?;
        }
        let (eta, alpha) = (cfg.learning_rate, cfg.momentum);
        for ((w, m), g) in self
            .weights
            .iter_mut()
            .zip(&mut self.momentum)
            .zip(gradient)
        {
            for ((wi, mi), &gi) in w.iter_mut().zip(m.iter_mut()).zip(g) {
                let step = momentum_step(eta, gi, alpha, *mi);
                *mi = step;
                *wi += step;
            }
        }
        Ok(())
    }

    /// Online training: each epoch visits the samples in a freshly shuffled
    /// order and updates after every pattern.
    pub fn train(
        &mut self,
        samples: &[TrainingSample<T>],
        cfg: &TrainConfig<T>,
    ) -> Result<TrainReport<T>, MlpError> {
        cfg.validate()?;
        if samples.is_empty() {
            return Err(MlpError::EmptyTrainingSet);
        }
        for s in samples {
            check_len(self.input_size(), s.input.len())?;
            check_len(self.output_size(), s.target.len())?;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        // Separate stream from the one `init` draws weights from.
        rng.set_stream(1);
        let mut order: Vec<usize> = (0..samples.len()).collect();
        let n = T::of(samples.len() as f64);
        let mut trace: Vec<T> = Vec::new();
        for epoch in 0..cfg.max_epochs {
            order.shuffle(&mut rng);
            let mut total = T::zero();
            for &i in &order {
                let (grad, err) = self.backward_with_error(&samples[i])?;
                if !err.is_finite() {
                    return Err(MlpError::NonFiniteError { epoch });
                }
                total += err;
                self.update_weights(&grad, cfg)?;
            }
            let mean = total / n;
            if !mean.is_finite() {
                return Err(MlpError::NonFiniteError { epoch });
            }
            let converged = trace
                .last()
                .is_some_and(|&prev: &T| (prev - mean).abs() < cfg.epsilon);
            trace.push(mean);
            if converged {
                break;
            }
        }
        Ok(TrainReport {
            epochs: trace.len(),
            final_error: *trace.last().expect("at least one epoch"),
            error_trace: trace,
        })
    }
}
