//! RMSProp and the mini-batch training loop.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::LstmNetwork;
use crate::error::{Error, Result};

/// Optimizer and schedule settings.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub rmsprop_decay: f64,
    pub rmsprop_epsilon: f64,
    pub seed: u64,
    /// Global gradient-norm clip; off by default.
    pub clip_norm: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            epochs: 100,
            batch_size: 64,
            rmsprop_decay: 0.9,
            rmsprop_epsilon: 1e-7,
            seed: 0,
            clip_norm: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "learning rate {} must be positive",
                self.learning_rate
            )));
        }
        if !(self.rmsprop_decay > 0.0 && self.rmsprop_decay < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "RMSProp decay {} outside (0, 1)",
                self.rmsprop_decay
            )));
        }
        if !(self.rmsprop_epsilon > 0.0) {
            return Err(Error::InvalidArgument("RMSProp epsilon must be positive".into()));
        }
        if self.epochs == 0 {
            return Err(Error::InvalidArgument("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch size must be at least 1".into()));
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0) {
                return Err(Error::InvalidArgument(format!("clip norm {c} must be positive")));
            }
        }
        Ok(())
    }
}

/// Running mean of squared gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct RmsPropState {
    pub mean_square: Vec<f64>,
}

impl RmsPropState {
    pub fn new(n: usize) -> Self {
        Self {
            mean_square: vec![0.0; n],
        }
    }
}

/// One RMSProp update:
/// `v <- rho v + (1 - rho) g^2`, `theta <- theta - lr g / sqrt(v + eps)`.
pub fn rmsprop_step(
    params: &mut [f64],
    grads: &[f64],
    state: &mut RmsPropState,
    config: &TrainConfig,
) -> Result<()> {
    if params.len() != grads.len() || state.mean_square.len() != params.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} parameters, {} gradients, {} optimizer slots",
            params.len(),
            grads.len(),
            state.mean_square.len()
        )));
    }
    if grads.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite {
            what: "gradient",
            epoch: 0,
            batch: 0,
        });
    }
    let rho = config.rmsprop_decay;
    for ((p, g), v) in params.iter_mut().zip(grads).zip(&mut state.mean_square) {
        *v = rho * *v + (1.0 - rho) * g * g;
        *p -= config.learning_rate * g / (*v + config.rmsprop_epsilon).sqrt();
    }
    Ok(())
}

/// Fixed-length standardized training sequences, each stored row-major
/// (`steps x width`).
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceSet {
    pub steps: usize,
    pub n_inputs: usize,
    pub n_outputs: usize,
    pub inputs: Vec<Vec<f64>>,
    pub targets: Vec<Vec<f64>>,
}

impl SequenceSet {
    pub fn new(steps: usize, n_inputs: usize, n_outputs: usize) -> Self {
        Self {
            steps,
            n_inputs,
            n_outputs,
            inputs: Vec::new(),
            targets: Vec::new(),
        }
    }

    pub fn push(&mut self, input: Vec<f64>, target: Vec<f64>) -> Result<()> {
        if input.len() != self.steps * self.n_inputs || target.len() != self.steps * self.n_outputs {
            return Err(Error::ShapeMismatch(format!(
                "sequence pair of {}/{} values, expected {}/{}",
                input.len(),
                target.len(),
                self.steps * self.n_inputs,
                self.steps * self.n_outputs
            )));
        }
        self.inputs.push(input);
        self.targets.push(target);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    /// Gathers the listed sequences into time-major batch buffers.
    fn gather(&self, indices: &[usize], x: &mut Vec<f64>, y: &mut Vec<f64>) {
        let batch = indices.len();
        let (ni, no) = (self.n_inputs, self.n_outputs);
        x.clear();
        x.resize(self.steps * batch * ni, 0.0);
        y.clear();
        y.resize(self.steps * batch * no, 0.0);
        for (b, &idx) in indices.iter().enumerate() {
            let (src_x, src_y) = (&self.inputs[idx], &self.targets[idx]);
            for t in 0..self.steps {
                x[(t * batch + b) * ni..(t * batch + b + 1) * ni]
                    .copy_from_slice(&src_x[t * ni..(t + 1) * ni]);
                y[(t * batch + b) * no..(t * batch + b + 1) * no]
                    .copy_from_slice(&src_y[t * no..(t + 1) * no]);
            }
        }
    }
}

/// Per-epoch progress report.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    /// Sequence-weighted mean of the mini-batch losses seen during the epoch.
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    /// Mean loss over the training set before the first update.
    pub initial_loss: f64,
    pub loss_history: Vec<f64>,
}

/// Mean loss of `net` over all sequences of `data`.
pub fn evaluate_loss(net: &LstmNetwork, data: &SequenceSet, batch_size: usize) -> Result<f64> {
    let (mut x, mut y) = (Vec::new(), Vec::new());
    let indices: Vec<usize> = (0..data.len()).collect();
    let mut total = 0.0;
    for chunk in indices.chunks(batch_size.max(1)) {
        data.gather(chunk, &mut x, &mut y);
        let (pred, _) = net.forward_batch(&x, data.steps, chunk.len(), false)?;
        total += super::mse_loss(&pred, &y)? * chunk.len() as f64;
    }
    Ok(total / data.len() as f64)
}

/// Trains `net` in place. See [`train_with`].
pub fn train(net: &mut LstmNetwork, data: &SequenceSet, config: &TrainConfig) -> Result<TrainOutcome> {
    train_with(net, data, config, |_| Ok(()))
}

/// Mini-batch RMSProp training with a per-epoch callback.
///
/// The sequence order is reshuffled every epoch from a generator seeded with
/// `config.seed`; gradients are averaged within each mini-batch. Identical
/// inputs and seeds give bit-identical results.
pub fn train_with(
    net: &mut LstmNetwork,
    data: &SequenceSet,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(EpochStats) -> Result<()>,
) -> Result<TrainOutcome> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::Empty("training set has no sequences".into()));
    }
    if data.n_inputs != net.n_inputs() || data.n_outputs != net.n_outputs() {
        return Err(Error::ShapeMismatch(format!(
            "training data is {}->{}, network {}->{}",
            data.n_inputs,
            data.n_outputs,
            net.n_inputs(),
            net.n_outputs()
        )));
    }
    let initial_loss = evaluate_loss(net, data, config.batch_size)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut state = RmsPropState::new(net.parameter_count());
    let (mut x, mut y) = (Vec::new(), Vec::new());
    let mut history = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for (batch_index, chunk) in order.chunks(config.batch_size).enumerate() {
            let non_finite = |what| Error::NonFinite {
                what,
                epoch,
                batch: batch_index,
            };
            data.gather(chunk, &mut x, &mut y);
            let (_, cache) = net.forward_batch(&x, data.steps, chunk.len(), true)?;
            let mut grads = net.backward(&cache.expect("cache requested"), &y)?;
            if !grads.loss.is_finite() {
                return Err(non_finite("loss"));
            }
            if let Some(limit) = config.clip_norm {
                let norm = grads.values.iter().map(|g| g * g).sum::<f64>().sqrt();
                if norm > limit {
                    let scale = limit / norm;
                    grads.values.iter_mut().for_each(|g| *g *= scale);
                }
            }
            rmsprop_step(net.params_mut(), &grads.values, &mut state, config).map_err(|e| match e {
                Error::NonFinite { what, .. } => non_finite(what),
                other => other,
            })?;
            epoch_loss += grads.loss * chunk.len() as f64;
        }
        let loss = epoch_loss / data.len() as f64;
        history.push(loss);
        on_epoch(EpochStats { epoch, loss })?;
    }
    Ok(TrainOutcome {
        initial_loss,
        loss_history: history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn config() -> TrainConfig {
        TrainConfig::default()
    }

    #[test]
    fn rmsprop_examples() {
        let cfg = config();
        let mut p = [0.0];
        let mut s = RmsPropState::new(1);
        rmsprop_step(&mut p, &[1.0], &mut s, &cfg).unwrap();
        assert!((s.mean_square[0] - 0.1).abs() < 1e-15);
        assert!((p[0] + 0.0031623).abs() < 1e-7);
        rmsprop_step(&mut p, &[1.0], &mut s, &cfg).unwrap();
        assert!((s.mean_square[0] - 0.19).abs() < 1e-15);

        let mut q = [2.5];
        let mut s = RmsPropState {
            mean_square: vec![0.4],
        };
        rmsprop_step(&mut q, &[0.0], &mut s, &cfg).unwrap();
        assert_eq!(q[0], 2.5);
        assert!((s.mean_square[0] - 0.36).abs() < 1e-15);

        assert!(matches!(
            rmsprop_step(&mut q, &[f64::NAN], &mut s, &cfg),
            Err(Error::NonFinite { .. })
        ));
    }

    #[test]
    fn config_validation() {
        assert!(config().validate().is_ok());
        for bad in [
            TrainConfig { epochs: 0, ..config() },
            TrainConfig { batch_size: 0, ..config() },
            TrainConfig { learning_rate: 0.0, ..config() },
            TrainConfig { rmsprop_decay: 1.0, ..config() },
            TrainConfig { clip_norm: Some(-1.0), ..config() },
        ] {
            assert!(bad.validate().is_err());
        }
    }

    fn identity_task(n: usize, steps: usize, seed: u64) -> SequenceSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut set = SequenceSet::new(steps, 1, 1);
        for _ in 0..n {
            let x: Vec<f64> = (0..steps).map(|_| rng.gen_range(-1.5..1.5)).collect();
            set.push(x.clone(), x).unwrap();
        }
        set
    }

    #[test]
    fn learns_identity_map() {
        let data = identity_task(100, 32, 4);
        let mut net = LstmNetwork::initialized(1, 1, &[4], 11).unwrap();
        let cfg = TrainConfig {
            learning_rate: 0.01,
            epochs: 50,
            batch_size: 10,
            seed: 3,
            ..config()
        };
        let out = train(&mut net, &data, &cfg).unwrap();
        let last = *out.loss_history.last().unwrap();
        assert!(last < 0.1 * out.initial_loss, "{} -> {last}", out.initial_loss);
    }

    #[test]
    fn training_is_deterministic() {
        let data = identity_task(20, 16, 1);
        let cfg = TrainConfig {
            epochs: 3,
            batch_size: 6,
            seed: 9,
            ..config()
        };
        let run = || {
            let mut net = LstmNetwork::initialized(1, 1, &[3], 2).unwrap();
            let out = train(&mut net, &data, &cfg).unwrap();
            (net, out)
        };
        let (na, a) = run();
        let (nb, b) = run();
        assert_eq!(na, nb);
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a.loss_history), bits(&b.loss_history));
    }

    #[test]
    fn rejects_empty_or_mismatched_data() {
        let mut net = LstmNetwork::initialized(1, 1, &[2], 0).unwrap();
        assert!(train(&mut net, &SequenceSet::new(4, 1, 1), &config()).is_err());
        let wide = identity_task(2, 4, 0);
        let mut net2 = LstmNetwork::initialized(2, 1, &[2], 0).unwrap();
        assert!(train(&mut net2, &wide, &config()).is_err());
        let mut set = SequenceSet::new(4, 1, 1);
        assert!(set.push(vec![0.0; 3], vec![0.0; 4]).is_err());
    }

    #[test]
    fn divergence_reports_position() {
        let mut data = identity_task(4, 4, 0);
        data.targets[0][0] = f64::INFINITY;
        let mut net = LstmNetwork::initialized(1, 1, &[2], 0).unwrap();
        let cfg = TrainConfig {
            batch_size: 4,
            ..config()
        };
        let err = train(&mut net, &data, &cfg).unwrap_err();
        assert!(matches!(err, Error::NonFinite { epoch: 0, batch: 0, .. }), "{err}");
    }
}
