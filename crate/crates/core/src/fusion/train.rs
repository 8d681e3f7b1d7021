use super::model::FusionModel;
use super::robot::FusionSample;
use super::FusionError;
use crate::actuation::{fdm_peak, FixationDensityMap};
use crate::numerics::{
    adam_step, epoch_batches, kl_from_logits, AdamConfig, AdamState, NumericsError, Tensor, TrainConfig,
    TrainHistory,
};
use crate::protocol::{Congruence, Side};
use crate::stimulus::{ground_truth_tensor, SceneGeometry};

impl TrainConfig {
    pub fn fusion_default(seed: u64) -> Self {
        Self {
            epochs: 30,
            batch: 16,
            lr: 1e-3,
            seed,
        }
    }
}

fn targets(model: &FusionModel) -> [Tensor; 2] {
    let geom = SceneGeometry::default().with_size(model.config.out_w, model.config.out_h);
    [ground_truth_tensor(&geom, Side::Left), ground_truth_tensor(&geom, Side::Right)]
}

fn target_for(t: &[Tensor; 2], side: Side) -> &Tensor {
    match side {
        Side::Left => &t[0],
        Side::Right => &t[1],
    }
}

/// Minibatch ADAM on the KL to the ground-truth map of the target.
pub fn train_fusion(
    mut model: FusionModel,
    train: &[FusionSample],
    val: &[FusionSample],
    config: &TrainConfig,
) -> Result<(FusionModel, TrainHistory), FusionError> {
    if train.is_empty() {
        return Err(FusionError::EmptyDataset);
    }
    let gts = targets(&model);
    let adam = AdamConfig {
        lr: config.lr,
        ..AdamConfig::default()
    };
    let mut state = AdamState::new(&model.params);
    let mut history = TrainHistory::default();
    for epoch in 0..config.epochs {
        let mut total = 0.0;
        for (b, batch) in epoch_batches(train.len(), config.batch, config.seed, epoch).iter().enumerate() {
            let mut grads = model.params.zeros_like();
            for &i in batch {
                let s = &train[i];
                let (logits, cache) = model.forward_cached(&s.stack)?;
                let (kl, dl) = match kl_from_logits(target_for(&gts, s.side), &logits) {
                    Ok(v) => v,
                    Err(NumericsError::NonFinite { .. }) => return Err(FusionError::NonFiniteLoss { epoch, batch: b }),
                    Err(e) => return Err(e.into()),
                };
                total += kl;
                grads.add_assign(&model.backward(&cache, &dl)?);
            }
            grads.scale(1.0 / batch.len() as f64);
            if !grads.all_finite() {
                return Err(FusionError::NonFiniteLoss { epoch, batch: b });
            }
            adam_step(&mut model.params, &grads, &mut state, &adam, |_| true)?;
        }
        history.train_kl.push(total / train.len() as f64);
        if !val.is_empty() {
            history.val_kl.push(evaluate_fusion(&model, val)?.mean_kl);
        }
    }
    model.mark_trained();
    Ok((model, history))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FusionEval {
    pub mean_kl: f64,
    /// Fraction of samples whose map peaks in the target's half.
    pub side_accuracy: f64,
    /// Side accuracy per condition, in `Congruence::ALL` order; NaN when a
    /// condition has no samples.
    pub accuracy_by_condition: [f64; 3],
}

pub fn evaluate_fusion(model: &FusionModel, samples: &[FusionSample]) -> Result<FusionEval, FusionError> {
    evaluate_with(model, samples, |s| s.stack.clone())
}

/// Evaluation with the SSL stream of every stack set to zero.
pub fn evaluate_fusion_without_ssl(model: &FusionModel, samples: &[FusionSample]) -> Result<FusionEval, FusionError> {
    evaluate_with(model, samples, |s| s.stack.with_ssl_zeroed())
}

fn evaluate_with(
    model: &FusionModel,
    samples: &[FusionSample],
    stack_of: impl Fn(&FusionSample) -> super::FeatureMapStack,
) -> Result<FusionEval, FusionError> {
    if samples.is_empty() {
        return Err(FusionError::EmptyDataset);
    }
    let gts = targets(model);
    let mut kl = 0.0;
    let mut hits = [0usize; 3];
    let mut counts = [0usize; 3];
    for s in samples {
        let logits = model.forward_cached(&stack_of(s))?.0;
        kl += kl_from_logits(target_for(&gts, s.side), &logits)?.0;
        let lo = logits.min();
        let peak = fdm_peak(&FixationDensityMap::from_tensor(&logits.map(|v| v - lo))?);
        let side = if peak.x < model.config.out_w / 2 { Side::Left } else { Side::Right };
        let c = s.congruence.index();
        counts[c] += 1;
        hits[c] += usize::from(!peak.degenerate && side == s.side);
    }
    let by = |c: usize| if counts[c] == 0 { f64::NAN } else { hits[c] as f64 / counts[c] as f64 };
    Ok(FusionEval {
        mean_kl: kl / samples.len() as f64,
        side_accuracy: hits.iter().sum::<usize>() as f64 / samples.len() as f64,
        accuracy_by_condition: [
            by(Congruence::Congruent.index()),
            by(Congruence::Incongruent.index()),
            by(Congruence::Neutral.index()),
        ],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fusion::{build_fusion_samples, FusionConfig, FusionDatasetConfig, StackBuilder};
    use crate::ssl::{SslConfig, SslModel};

    #[test]
    fn empty_dataset_is_rejected() {
        let m = FusionModel::init(FusionConfig::default(), 0).unwrap();
        assert!(matches!(
            train_fusion(m, &[], &[], &TrainConfig::fusion_default(0)),
            Err(FusionError::EmptyDataset)
        ));
    }

    #[test]
    fn short_run_lowers_the_loss() {
        let ssl = SslModel::init(SslConfig::default(), 0).unwrap();
        let cfg = FusionConfig::default();
        let b = StackBuilder::new(&ssl, cfg).unwrap();
        let data = build_fusion_samples(&b, &FusionDatasetConfig::default(), 3, 0, 16).unwrap();
        let m = FusionModel::init(cfg, 1).unwrap();
        let tc = TrainConfig {
            epochs: 5,
            batch: 8,
            lr: 3e-3,
            seed: 0,
        };
        let (trained, h) = train_fusion(m, &data, &[], &tc).unwrap();
        assert!(trained.is_trained());
        assert!(h.train_kl.last().unwrap() < &h.train_kl[0], "{h:?}");
    }
}
