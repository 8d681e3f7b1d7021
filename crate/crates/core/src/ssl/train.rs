use super::dataset::{scene_geometry, SslSample};
use super::net::{SslModel, VIDEO_PREFIX};
use super::SslError;
use crate::actuation::{fdm_peak, FixationDensityMap};
use crate::numerics::{
    adam_step, epoch_batches, kl_from_logits, AdamConfig, AdamState, NumericsError, Tensor, TrainConfig,
    TrainHistory,
};
use crate::protocol::Side;
use crate::stimulus::ground_truth_tensor;

impl TrainConfig {
    pub fn ssl_default(seed: u64) -> Self {
        Self {
            epochs: 50,
            batch: 64,
            lr: 1e-3,
            seed,
        }
    }
}

fn targets(model: &SslModel) -> [Tensor; 2] {
    let geom = scene_geometry(&model.config);
    [ground_truth_tensor(&geom, Side::Left), ground_truth_tensor(&geom, Side::Right)]
}

fn target_for<'a>(t: &'a [Tensor; 2], side: Side) -> &'a Tensor {
    match side {
        Side::Left => &t[0],
        Side::Right => &t[1],
    }
}

/// Minibatch ADAM on the KL to the ground-truth map. The video branch is
/// frozen, so its features are computed once per sample.
pub fn train_ssl(
    mut model: SslModel,
    train: &[SslSample],
    val: &[SslSample],
    config: &TrainConfig,
) -> Result<(SslModel, TrainHistory), SslError> {
    if train.is_empty() {
        return Err(SslError::EmptyDataset);
    }
    let gts = targets(&model);
    let vfeats = train
        .iter()
        .map(|s| Ok(model.video_forward(&s.input.video)?.1))
        .collect::<Result<Vec<_>, SslError>>()?;
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
                let (logits, cache) = model.head_forward(&s.input.left, &s.input.right, &vfeats[i])?;
                let (kl, dl) = match kl_from_logits(target_for(&gts, s.side), &logits) {
                    Ok(v) => v,
                    Err(NumericsError::NonFinite { .. }) => return Err(SslError::NonFiniteLoss { epoch, batch: b }),
                    Err(e) => return Err(e.into()),
                };
                total += kl;
                grads.add_assign(&model.head_backward(&cache, &dl)?.0);
            }
            grads.scale(1.0 / batch.len() as f64);
            if !grads.all_finite() {
                return Err(SslError::NonFiniteLoss { epoch, batch: b });
            }
            adam_step(&mut model.params, &grads, &mut state, &adam, |p| !p.starts_with(VIDEO_PREFIX))?;
        }
        history.train_kl.push(total / train.len() as f64);
        if !val.is_empty() {
            history.val_kl.push(evaluate_ssl(&model, val)?.mean_kl);
        }
    }
    model.mark_trained();
    Ok((model, history))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SslEval {
    pub mean_kl: f64,
    /// Fraction of samples whose map peaks in the target's half.
    pub side_accuracy: f64,
}

pub fn evaluate_ssl(model: &SslModel, samples: &[SslSample]) -> Result<SslEval, SslError> {
    if samples.is_empty() {
        return Err(SslError::EmptyDataset);
    }
    let gts = targets(model);
    let (mut kl, mut hits) = (0.0, 0usize);
    for s in samples {
        let logits = model.logits(&s.input)?;
        kl += kl_from_logits(target_for(&gts, s.side), &logits)?.0;
        let lo = logits.min();
        let peak = fdm_peak(&FixationDensityMap::from_tensor(&logits.map(|v| v - lo))?);
        let side = if peak.x < model.config.out_w / 2 { Side::Left } else { Side::Right };
        hits += usize::from(!peak.degenerate && side == s.side);
    }
    let n = samples.len() as f64;
    Ok(SslEval {
        mean_kl: kl / n,
        side_accuracy: hits as f64 / n,
    })
}
