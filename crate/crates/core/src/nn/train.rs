use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::loss::loss_softmax_xent;
use super::model::{Gradients, Mode, Model};
use super::NnError;
use crate::data::{batches, Dataset};

/// Learning-rate grid searched for each scheme.
pub const LR_GRID: [f64; 7] = [0.1, 0.03, 0.01, 0.003, 0.001, 0.0003, 0.0001];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub lr_decay_factor: f64,
    pub lr_decay_epochs: Vec<usize>,
    pub l2_lambda: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub lr_grid: Option<Vec<f64>>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            lr_decay_factor: 1.0,
            lr_decay_epochs: Vec::new(),
            l2_lambda: 5e-4,
            batch_size: 125,
            epochs: 150,
            seed: 0,
            lr_grid: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), NnError> {
        if !(self.learning_rate > 0.0) {
            return Err(NnError::Config(format!(
                "learning rate {} must be positive",
                self.learning_rate
            )));
        }
        if !(self.lr_decay_factor > 0.0 && self.lr_decay_factor <= 1.0) {
            return Err(NnError::Config(format!(
                "decay factor {} must lie in (0, 1]",
                self.lr_decay_factor
            )));
        }
        if self.batch_size == 0 {
            return Err(NnError::Config("batch size must be at least 1".into()));
        }
        if self.l2_lambda < 0.0 {
            return Err(NnError::Config("l2_lambda must be non-negative".into()));
        }
        Ok(())
    }

    /// Learning rate in effect during `epoch` (1-based): the base rate times
    /// the decay factor once for every listed epoch already reached.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let decays = self.lr_decay_epochs.iter().filter(|&&e| epoch >= e).count();
        self.learning_rate * self.lr_decay_factor.powi(decays as i32)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub test_acc: f64,
    pub lr: f64,
}

/// `w <- w - lr * (g + lambda * w)` on weights, `b <- b - lr * g` on biases.
pub fn sgd_step(
    model: &mut Model,
    grads: &Gradients,
    config: &TrainConfig,
    epoch: usize,
) -> Result<(), NnError> {
    let lr = config.lr_at(epoch);
    for (layer, (p, g)) in model.params.iter_mut().zip(grads).enumerate() {
        let (Some(p), Some(g)) = (p.as_mut(), g.as_ref()) else {
            continue;
        };
        if !(g.weight.all_finite() && g.bias.all_finite()) {
            return Err(NnError::NonFiniteGradient { layer });
        }
        for (w, &dw) in p.weight.data_mut().iter_mut().zip(g.weight.data()) {
            *w -= lr * (dw + config.l2_lambda * *w);
        }
        for (b, &db) in p.bias.data_mut().iter_mut().zip(g.bias.data()) {
            *b -= lr * db;
        }
    }
    Ok(())
}

fn mix(a: u64, b: u64) -> u64 {
    // splitmix64 finaliser over the pair
    let mut z = a ^ b
        .wrapping_add(0x9E37_79B9_7F4A_7C15)
        .wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Trains `model` in place for `config.epochs` epochs, evaluating on `test`
/// after every epoch. `on_epoch` sees each record as it is produced.
pub fn train_with(
    model: &mut Model,
    train: &Dataset,
    test: &Dataset,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochMetrics),
) -> Result<Vec<EpochMetrics>, NnError> {
    config.validate()?;
    let mut history = Vec::with_capacity(config.epochs);
    for epoch in 1..=config.epochs {
        let epoch_seed = mix(config.seed, epoch as u64);
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for (step, (x, labels)) in batches(train, config.batch_size, epoch_seed, true).enumerate() {
            let mode = Mode::Train {
                seed: mix(epoch_seed, step as u64),
            };
            let (logits, cache) = model.forward(&x, mode)?;
            let (loss, dlogits) = loss_softmax_xent(&logits, &labels)?;
            if !loss.is_finite() {
                return Err(NnError::Diverged { epoch });
            }
            loss_sum += loss * labels.len() as f64;
            correct += logits
                .argmax_rows()
                .iter()
                .zip(&labels)
                .filter(|(p, l)| p == l)
                .count();
            let (grads, _) = model.backward(&cache, &dlogits)?;
            sgd_step(model, &grads, config, epoch)?;
        }
        let n = train.len().max(1) as f64;
        let record = EpochMetrics {
            epoch,
            train_loss: loss_sum / n,
            train_acc: correct as f64 / n,
            test_acc: evaluate(model, test)?,
            lr: config.lr_at(epoch),
        };
        on_epoch(&record);
        history.push(record);
    }
    Ok(history)
}

pub fn train(
    mut model: Model,
    train_set: &Dataset,
    test: &Dataset,
    config: &TrainConfig,
) -> Result<(Model, Vec<EpochMetrics>), NnError> {
    let history = train_with(&mut model, train_set, test, config, |_| {})?;
    Ok((model, history))
}

/// Class predictions in eval mode.
pub fn predict(model: &Model, ds: &Dataset) -> Result<Vec<usize>, NnError> {
    let mut out = Vec::with_capacity(ds.len());
    for (x, _) in batches(ds, 250, 0, false) {
        let (logits, _) = model.forward(&x, Mode::Eval)?;
        out.extend(logits.argmax_rows());
    }
    Ok(out)
}

/// Fraction of correctly classified samples.
pub fn evaluate(model: &Model, ds: &Dataset) -> Result<f64, NnError> {
    if ds.is_empty() {
        return Ok(0.0);
    }
    let preds = predict(model, ds)?;
    let correct = preds.iter().zip(&ds.labels).filter(|(p, l)| p == l).count();
    Ok(correct as f64 / ds.len() as f64)
}

/// Outcome of one learning-rate candidate.
#[derive(Debug, Clone, PartialEq)]
pub struct LrCandidate {
    pub lr: f64,
    pub test_acc: Option<f64>,
}

/// Trains one fresh model per candidate rate for `budget_epochs` and returns
/// the rate with the best final test accuracy, preferring the smaller rate on
/// ties. Candidates that diverge are never selected.
pub fn lr_search(
    build: impl Fn() -> Result<Model, NnError>,
    train_set: &Dataset,
    test: &Dataset,
    grid: &[f64],
    budget_epochs: usize,
    base: &TrainConfig,
) -> Result<(f64, Vec<LrCandidate>), NnError> {
    if grid.is_empty() {
        return Err(NnError::Config("learning-rate grid is empty".into()));
    }
    let mut results = Vec::with_capacity(grid.len());
    for &lr in grid {
        let config = TrainConfig {
            learning_rate: lr,
            epochs: budget_epochs,
            ..base.clone()
        };
        let test_acc = match train(build()?, train_set, test, &config) {
            Ok((_, hist)) => hist
                .last()
                .filter(|m| m.train_loss.is_finite())
                .map(|m| m.test_acc),
            Err(NnError::Diverged { .. } | NnError::NonFiniteGradient { .. }) => None,
            Err(e) => return Err(e),
        };
        results.push(LrCandidate { lr, test_acc });
    }
    let best = results
        .iter()
        .filter_map(|c| c.test_acc.map(|a| (c.lr, a)))
        .fold(None::<(f64, f64)>, |best, (lr, acc)| match best {
            Some((blr, bacc)) if bacc > acc || (bacc == acc && blr <= lr) => Some((blr, bacc)),
            _ => Some((lr, acc)),
        });
    match best {
        Some((lr, _)) => Ok((lr, results)),
        None => Err(NnError::AllDiverged),
    }
}

pub const METRICS_HEADER: &str = "epoch,train_loss,train_acc,test_acc,lr";

pub fn metrics_csv(history: &[EpochMetrics]) -> String {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for m in history {
        writeln!(
            out,
            "{},{},{},{},{}",
            m.epoch, m.train_loss, m.train_acc, m.test_acc, m.lr
        )
        .unwrap();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth_blobs;
    use crate::nn::{LayerSpec, Params, Tensor};

    fn scalar_model(w: f64) -> Model {
        let mut m = Model::new(vec![1], vec![LayerSpec::dense(1)], 0, 1.0).unwrap();
        m.params[0] = Some(Params {
            weight: Tensor::new(vec![1, 1], vec![w]),
            bias: Tensor::new(vec![1], vec![0.5]),
        });
        m
    }

    fn grads(gw: f64, gb: f64) -> Gradients {
        vec![Some(Params {
            weight: Tensor::new(vec![1, 1], vec![gw]),
            bias: Tensor::new(vec![1], vec![gb]),
        })]
    }

    #[test]
    fn weight_decay_step() {
        let cfg = TrainConfig {
            learning_rate: 0.1,
            l2_lambda: 0.001,
            ..Default::default()
        };
        let mut m = scalar_model(1.0);
        sgd_step(&mut m, &grads(0.0, 0.0), &cfg, 1).unwrap();
        let p = m.params[0].as_ref().unwrap();
        assert!((p.weight.data()[0] - 0.9999).abs() < 1e-15);
        assert_eq!(p.bias.data()[0], 0.5, "biases are exempt from L2");
    }

    #[test]
    fn plain_sgd_step() {
        let cfg = TrainConfig {
            learning_rate: 0.1,
            l2_lambda: 0.0,
            ..Default::default()
        };
        let mut m = scalar_model(1.0);
        sgd_step(&mut m, &grads(2.0, 1.0), &cfg, 1).unwrap();
        let p = m.params[0].as_ref().unwrap();
        assert!((p.weight.data()[0] - 0.8).abs() < 1e-15);
        assert!((p.bias.data()[0] - 0.4).abs() < 1e-15);
    }

    #[test]
    fn non_finite_gradient_aborts() {
        let cfg = TrainConfig::default();
        let mut m = scalar_model(1.0);
        let err = sgd_step(&mut m, &grads(f64::NAN, 0.0), &cfg, 1).unwrap_err();
        assert!(matches!(err, NnError::NonFiniteGradient { layer: 0 }));
    }

    #[test]
    fn decay_schedule() {
        let cfg = TrainConfig {
            learning_rate: 0.1,
            lr_decay_factor: 0.4,
            lr_decay_epochs: vec![80, 140],
            ..Default::default()
        };
        assert!((cfg.lr_at(79) - 0.1).abs() < 1e-15);
        assert!((cfg.lr_at(100) - 0.04).abs() < 1e-15);
        assert!((cfg.lr_at(150) - 0.016).abs() < 1e-15);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig {
            learning_rate: 0.0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(TrainConfig {
            lr_decay_factor: 1.5,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(TrainConfig {
            batch_size: 0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(TrainConfig::default().validate().is_ok());
    }

    #[test]
    fn constant_predictor_accuracy() {
        let ds = synth_blobs(10, 4, 100, 0).unwrap();
        let mut m = Model::new(vec![4], vec![LayerSpec::dense(10)], 0, 1.0).unwrap();
        let p = m.params[0].as_mut().unwrap();
        p.weight.data_mut().fill(0.0);
        p.bias.data_mut()[0] = 1.0;
        assert_eq!(evaluate(&m, &ds).unwrap(), 0.1);
    }

    #[test]
    fn csv_format() {
        let h = vec![EpochMetrics {
            epoch: 1,
            train_loss: 0.5,
            train_acc: 0.75,
            test_acc: 0.7,
            lr: 0.01,
        }];
        assert_eq!(
            metrics_csv(&h),
            "epoch,train_loss,train_acc,test_acc,lr\n1,0.5,0.75,0.7,0.01\n"
        );
    }
}
