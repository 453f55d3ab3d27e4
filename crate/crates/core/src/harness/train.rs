use std::time::Instant;

use sha2::{Digest, Sha256};

use super::config::hex_digest;
use super::report::{EpochRecord, RepeatedRun, RunReport, RunSummary};
use super::{HarnessError, Result, TrainConfig};
use crate::data::{split, Dataset};
use crate::losses::{LossFunction, LossKind};
use crate::nn::{Mode, Model, NnError};
use crate::optim::{OptimError, OptimizerState};
use crate::tensor::{argmax, Tensor, TensorError};

const EVAL_CHUNK: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub loss: f64,
    pub accuracy: f64,
}

/// Mean loss and accuracy of `model` on `data`, in eval mode.
pub fn evaluate(model: &Model, loss: &LossFunction, data: &Dataset) -> Result<Evaluation> {
    let n = data.len();
    let mut total = 0.0;
    let mut correct = 0usize;
    let idx: Vec<usize> = (0..n).collect();
    for chunk in idx.chunks(EVAL_CHUNK) {
        let x = data.inputs().select_rows(chunk);
        let y = data.labels().select_rows(chunk);
        let p = model.predict(&x)?;
        for r in 0..p.rows() {
            total += loss.value(p.row(r), y.row(r))?;
            correct += usize::from(argmax(p.row(r)) == argmax(y.row(r)));
        }
    }
    Ok(Evaluation {
        loss: total / n as f64,
        accuracy: correct as f64 / n as f64,
    })
}

fn params_hash(model: &Model) -> String {
    let bytes: Vec<u8> = model.flat_params().iter().flat_map(|v| v.to_le_bytes()).collect();
    hex_digest(&bytes)
}

fn run_flags(config: &TrainConfig) -> Vec<String> {
    let mut flags = vec!["no_augmentation".to_string()];
    match config.loss.kind {
        LossKind::Adma { a } if a.exceeds_recommended() => flags.push("a_exceeds_recommended".into()),
        LossKind::SquaredHinge => flags.push("squared_hinge_margin_on_2p_minus_1".into()),
        _ => {}
    }
    flags
}

fn is_non_finite(e: &HarnessError) -> bool {
    matches!(
        e,
        HarnessError::Tensor(TensorError::NonFinite { .. })
            | HarnessError::Nn(NnError::Tensor(TensorError::NonFinite { .. }))
            | HarnessError::Optim(OptimError::NonFiniteGradient { .. })
    )
}

/// One optimisation step on a mini-batch; returns the batch loss and the
/// number of correct predictions.
fn step(
    model: &mut Model,
    optimizer: &mut OptimizerState,
    loss: &LossFunction,
    x: &Tensor,
    y: &Tensor,
) -> Result<(f64, usize)> {
    let p = model.forward(x)?;
    let (value, grad) = loss.batch_value_and_grad(&p, y)?;
    if !value.is_finite() {
        return Err(HarnessError::NonFiniteLoss {
            epoch: 0,
            batch: 0,
            detail: format!("batch loss is {value}"),
        });
    }
    model.backward(&grad)?;
    optimizer.apply_update(&mut model.params_mut())?;
    let correct = (0..p.rows())
        .filter(|&r| argmax(p.row(r)) == argmax(y.row(r)))
        .count();
    Ok((value, correct))
}

fn prepare(config: &TrainConfig) -> Result<(Dataset, Dataset)> {
    config.validate()?;
    let (pool, val) = config.dataset.load()?;
    Ok(match val {
        Some(val) => (pool, val),
        None => split(&pool, &config.split_spec())?,
    })
}

/// Trains one model with `config.seed`. A non-finite loss or gradient aborts
/// with the epoch and batch where it appeared.
pub fn train(config: &TrainConfig) -> Result<RunReport> {
    Ok(train_model(config)?.0)
}

/// Like [`train`], also returning the trained model and the two data sets.
pub fn train_model(config: &TrainConfig) -> Result<(RunReport, Model, Dataset, Dataset)> {
    let (train_set, val_set) = prepare(config)?;
    let (report, model) = train_on(config, &train_set, &val_set)?;
    Ok((report, model, train_set, val_set))
}

pub(crate) fn train_on(config: &TrainConfig, train_set: &Dataset, val_set: &Dataset) -> Result<(RunReport, Model)> {
    let mut model = config
        .model
        .build(train_set.feature_shape(), train_set.class_count(), config.seed)?;
    let init_hash = params_hash(&model);
    let mut optimizer = OptimizerState::new(config.optimizer, config.lr, config.weight_decay)?;
    let initial = evaluate(&model, &config.loss, val_set)?;
    log::info!(
        "{} seed {}: {} params, {} train / {} val, initial val acc {:.4}",
        config.loss,
        config.seed,
        model.param_count(),
        train_set.len(),
        val_set.len(),
        initial.accuracy
    );

    let mut order_hash = Sha256::new();
    let mut records = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let started = Instant::now();
        let lr = config.schedule.lr_at(config.lr, epoch);
        optimizer.set_lr(lr);
        model.set_mode(Mode::Train);
        let batches = train_set.batches(config.batch_size, Some(config.seed), epoch);
        for &i in batches.order() {
            order_hash.update((i as u64).to_le_bytes());
        }
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for (b, (x, y)) in batches.enumerate() {
            let (value, hits) = step(&mut model, &mut optimizer, &config.loss, &x, &y).map_err(|e| match e {
                HarnessError::NonFiniteLoss { detail, .. } => HarnessError::NonFiniteLoss {
                    epoch: epoch + 1,
                    batch: b,
                    detail,
                },
                e if is_non_finite(&e) => HarnessError::NonFiniteLoss {
                    epoch: epoch + 1,
                    batch: b,
                    detail: e.to_string(),
                },
                e => e,
            })?;
            loss_sum += value * x.rows() as f64;
            correct += hits;
        }
        model.set_mode(Mode::Eval);
        let val = evaluate(&model, &config.loss, val_set)?;
        let record = EpochRecord {
            epoch: epoch + 1,
            train_loss: loss_sum / train_set.len() as f64,
            train_acc: correct as f64 / train_set.len() as f64,
            val_loss: val.loss,
            val_acc: val.accuracy,
            lr,
            wall_time: started.elapsed().as_secs_f64(),
        };
        log::info!(
            "epoch {:>3}  train loss {:.5} acc {:.4}  val loss {:.5} acc {:.4}  ({:.1}s)",
            record.epoch,
            record.train_loss,
            record.train_acc,
            record.val_loss,
            record.val_acc,
            record.wall_time
        );
        records.push(record);
    }

    let summary = RunSummary::from_records(&records, initial.accuracy, config.variance_window);
    let report = RunReport {
        config_hash: config.hash(),
        config: config.clone(),
        seed: config.seed,
        loss: config.loss.to_string(),
        param_count: model.param_count(),
        train_size: train_set.len(),
        val_size: val_set.len(),
        initial_val_loss: initial.loss,
        initial_val_acc: initial.accuracy,
        records,
        summary,
        init_hash,
        data_order_hash: order_hash.finalize().iter().map(|b| format!("{b:02x}")).collect(),
        final_params_hash: params_hash(&model),
        flags: run_flags(config),
    };
    Ok((report, model))
}

/// Runs `config.repetitions` copies with seeds `seed, seed + 1, ...`.
pub fn train_repeated(config: &TrainConfig) -> Result<RepeatedRun> {
    let runs = (0..config.repetitions as u64)
        .map(|i| {
            let mut c = config.clone();
            c.seed = config.seed + i;
            train(&c)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RepeatedRun::from_runs(runs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::{DatasetSpec, ModelSpec};
    use crate::optim::OptimizerKind;

    fn small() -> TrainConfig {
        let mut c = TrainConfig::blobs_default();
        c.dataset = DatasetSpec::blobs(3, 2, 40, 0.05);
        c.epochs = 20;
        c.batch_size = 16;
        c.lr = 0.1;
        c
    }

    #[test]
    fn zero_epochs_reports_initial_evaluation() {
        let mut c = small();
        c.epochs = 0;
        let r = train(&c).unwrap();
        assert!(r.records.is_empty());
        assert_eq!(r.summary.final_val_acc, r.initial_val_acc);
        assert_eq!(r.summary.first_epoch_val_acc, None);
    }

    #[test]
    fn rerun_is_identical() {
        let c = small();
        let a = train(&c).unwrap();
        let b = train(&c).unwrap();
        assert!(a.same_outcome(&b));
        assert_eq!(a.final_params_hash, b.final_params_hash);
    }

    #[test]
    fn learns_separable_blobs() {
        let r = train(&small()).unwrap();
        assert!(r.summary.final_val_acc > 0.95, "{:?}", r.summary);
        assert_eq!(r.train_size + r.val_size, 120);
    }

    #[test]
    fn divergence_names_epoch_and_batch() {
        let mut c = small();
        c.model = ModelSpec::Mlp {
            hidden: vec![16],
            activation: crate::nn::Activation::Relu,
            dropout: 0.0,
        };
        c.loss = LossFunction::mse();
        c.optimizer = OptimizerKind::Sgd {
            momentum: 0.0,
            nesterov: false,
        };
        c.lr = 1e300;
        match train(&c) {
            Err(HarnessError::NonFiniteLoss { epoch, batch, .. }) => {
                assert_eq!(epoch, 1);
                assert!(batch < 6);
            }
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn flags_large_scaling_factor() {
        let mut c = small();
        c.epochs = 1;
        c.loss = LossFunction::adma(0.8).unwrap();
        assert!(train(&c).unwrap().flags.contains(&"a_exceeds_recommended".to_string()));
    }

    #[test]
    fn repetitions_use_consecutive_seeds() {
        let mut c = small();
        c.epochs = 2;
        c.repetitions = 3;
        c.seed = 7;
        let r = train_repeated(&c).unwrap();
        assert_eq!(r.seeds, vec![7, 8, 9]);
        assert_eq!(r.runs.len(), 3);
    }
}
