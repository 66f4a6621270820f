use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::network::{accumulate_gradient, Cache};
use super::{ForecasterConfig, ForecasterError, ForecasterParams, TrainingSample};

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;
/// Keeps the shuffle stream independent of the weight-init stream.
const SHUFFLE_STREAM: u64 = 0x5eed_5bff_1e00_0001;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingReport {
    /// Mean per-sample training loss of each epoch, measured before each batch update.
    pub epoch_losses: Vec<f64>,
    /// Mean loss over all samples after the last epoch.
    pub final_loss: Option<f64>,
    pub sample_count: usize,
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    step: i32,
}

impl Adam {
    fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
        }
    }

    fn update(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        self.step += 1;
        let c1 = 1.0 - BETA1.powi(self.step);
        let c2 = 1.0 - BETA2.powi(self.step);
        for (((p, g), m), v) in params.iter_mut().zip(grad).zip(&mut self.m).zip(&mut self.v) {
            *m = BETA1 * *m + (1.0 - BETA1) * g;
            *v = BETA2 * *v + (1.0 - BETA2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
        }
    }
}

/// Mini-batch Adam on the configured loss. `config` supplies the optimization
/// settings and must describe the same architecture as `params`.
pub fn train(
    mut params: ForecasterParams,
    samples: &[TrainingSample],
    config: &ForecasterConfig,
) -> Result<(ForecasterParams, TrainingReport), ForecasterError> {
    config.validate()?;
    if !config.same_architecture(params.config()) {
        return Err(ForecasterError::Config(
            "training config describes a different architecture than the parameters".into(),
        ));
    }
    if samples.is_empty() {
        return Err(ForecasterError::NoSamples);
    }
    for s in samples {
        params.check_inputs(&s.inputs, &s.positions)?;
    }
    let mut report = TrainingReport {
        sample_count: samples.len(),
        ..TrainingReport::default()
    };
    if config.epochs == 0 {
        return Ok((params, report));
    }

    let layout = params.layout.clone();
    let mut cache = Cache::new(&layout);
    let mut grad = vec![0.0; params.values.len()];
    let mut adam = Adam::new(params.values.len());
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ SHUFFLE_STREAM);
    let mut order: Vec<usize> = (0..samples.len()).collect();

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(config.batch_size) {
            grad.fill(0.0);
            let scale = 1.0 / batch.len() as f64;
            for &i in batch {
                epoch_loss += accumulate_gradient(&layout, &config.loss, &params.values, &samples[i], &mut cache, &mut grad, scale);
            }
            if !epoch_loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(ForecasterError::Divergence { epoch });
            }
            adam.update(&mut params.values, &grad, config.learning_rate);
        }
        report.epoch_losses.push(epoch_loss / samples.len() as f64);
    }
    if !params.is_finite() {
        return Err(ForecasterError::Divergence {
            epoch: config.epochs - 1,
        });
    }
    let final_loss = params.mean_loss(samples)?;
    if !final_loss.is_finite() {
        return Err(ForecasterError::Divergence {
            epoch: config.epochs - 1,
        });
    }
    report.final_loss = Some(final_loss);
    params.config.epochs = config.epochs;
    params.config.learning_rate = config.learning_rate;
    params.config.batch_size = config.batch_size;
    params.config.loss = config.loss.clone();
    params.meta.final_loss = Some(final_loss);
    params.meta.sample_count = samples.len();
    Ok((params, report))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn desk(epochs: usize) -> ForecasterConfig {
        ForecasterConfig {
            epochs,
            ..ForecasterConfig::desk()
        }
    }

    fn sample() -> TrainingSample {
        TrainingSample::from_window(&[0.1, -0.2, 0.05, 0.3, -0.1, 0.0, 0.2, 0.35])
    }

    #[test]
    fn zero_epochs_is_identity() {
        let p = ForecasterParams::init(&desk(0)).unwrap();
        let (trained, report) = train(p.clone(), &[sample()], &desk(0)).unwrap();
        assert_eq!(trained, p);
        assert!(report.epoch_losses.is_empty());
    }

    #[test]
    fn zero_learning_rate_changes_nothing() {
        let cfg = ForecasterConfig {
            learning_rate: 0.0,
            ..desk(3)
        };
        let p = ForecasterParams::init(&cfg).unwrap();
        let samples = vec![sample(); 10];
        let (trained, report) = train(p.clone(), &samples, &cfg).unwrap();
        assert_eq!(trained.values(), p.values());
        let first = report.epoch_losses[0];
        assert!(report.epoch_losses.iter().all(|l| (l - first).abs() < 1e-15));
    }

    #[test]
    fn empty_samples_rejected() {
        let p = ForecasterParams::init(&desk(1)).unwrap();
        assert!(matches!(train(p, &[], &desk(1)), Err(ForecasterError::NoSamples)));
    }

    #[test]
    fn divergence_reports_epoch() {
        let cfg = desk(2);
        let p = ForecasterParams::init(&cfg).unwrap();
        let bad = TrainingSample {
            target: f64::INFINITY,
            ..sample()
        };
        assert!(matches!(train(p, &[bad], &cfg), Err(ForecasterError::Divergence { epoch: 0 })));
    }

    #[test]
    fn training_is_deterministic_and_reduces_loss() {
        let cfg = ForecasterConfig {
            learning_rate: 3e-3,
            ..desk(30)
        };
        let samples: Vec<TrainingSample> = (0..40)
            .map(|i| {
                let x = i as f64 * 0.05 - 1.0;
                TrainingSample::from_window(&[x, x, x, x, x, x, x, 0.5 * x])
            })
            .collect();
        let p = ForecasterParams::init(&cfg).unwrap();
        let (a, ra) = train(p.clone(), &samples, &cfg).unwrap();
        let (b, rb) = train(p, &samples, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(ra, rb);
        assert!(ra.final_loss.unwrap() < ra.epoch_losses[0]);
        assert_eq!(a.meta.sample_count, 40);
    }

    #[test]
    fn architecture_mismatch_rejected() {
        let p = ForecasterParams::init(&desk(1)).unwrap();
        let other = ForecasterConfig {
            hidden_size: 12,
            ..desk(1)
        };
        assert!(matches!(train(p, &[sample()], &other), Err(ForecasterError::Config(_))));
    }
}
