use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{adam_step, gradients, init_params, snapshot_loss, ModelConfig, ModelError, ModelParams};
use crate::graph::{GraphInput, Profile};

const STREAM_SHUFFLE: u64 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotLoss {
    pub timestamp: i64,
    pub profile: Profile,
    pub loss: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossSummary {
    pub count: usize,
    pub min: f64,
    pub median: f64,
    pub max: f64,
}

impl LossSummary {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let mid = v.len() / 2;
        let median = if v.len() % 2 == 1 {
            v[mid]
        } else {
            (v[mid - 1] + v[mid]) / 2.0
        };
        Some(Self {
            count: v.len(),
            min: v[0],
            median,
            max: v[v.len() - 1],
        })
    }
}

/// Per-epoch training history and per-snapshot losses.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LossReport {
    /// Mean batch loss for each epoch, measured before each batch's update.
    pub epoch_mean: Vec<f64>,
    pub per_snapshot: Vec<SnapshotLoss>,
}

impl LossReport {
    pub fn summary(&self, profile: Profile) -> Option<LossSummary> {
        let v: Vec<f64> = self
            .per_snapshot
            .iter()
            .filter(|s| s.profile == profile)
            .map(|s| s.loss)
            .collect();
        LossSummary::of(&v)
    }

    pub fn summaries(&self) -> BTreeMap<Profile, LossSummary> {
        Profile::ALL
            .into_iter()
            .filter_map(|p| self.summary(p).map(|s| (p, s)))
            .collect()
    }

    /// Median per-snapshot loss over everything in the report.
    pub fn overall(&self) -> Option<LossSummary> {
        LossSummary::of(&self.per_snapshot.iter().map(|s| s.loss).collect::<Vec<_>>())
    }
}

/// `epoch,mean_loss` lines, one per epoch.
pub fn loss_csv(report: &LossReport) -> String {
    let mut out = String::from("epoch,mean_loss\n");
    for (i, l) in report.epoch_mean.iter().enumerate() {
        out.push_str(&format!("{},{}\n", i + 1, l));
    }
    out
}

/// Loss of every snapshot under fixed parameters.
pub fn evaluate_loss(params: &ModelParams, inputs: &[GraphInput]) -> Result<LossReport, ModelError> {
    let per_snapshot = inputs
        .iter()
        .map(|g| {
            Ok(SnapshotLoss {
                timestamp: g.timestamp,
                profile: g.profile,
                loss: snapshot_loss(params, g)?,
            })
        })
        .collect::<Result<_, ModelError>>()?;
    Ok(LossReport {
        epoch_mean: Vec::new(),
        per_snapshot,
    })
}

/// Trains from a seeded Glorot init. Each epoch shuffles the snapshots,
/// splits them into `batch_size` chunks, and takes one Adam step per chunk on
/// the chunk-mean gradient. The returned report's `per_snapshot` holds the
/// final parameters' loss on every training snapshot.
pub fn train(inputs: &[GraphInput], config: &ModelConfig) -> Result<(ModelParams, LossReport), ModelError> {
    config.validate()?;
    if inputs.is_empty() {
        return Err(ModelError::EmptyTrainSet);
    }
    if let Some(bad) = inputs
        .iter()
        .find(|g| !matches!(g.profile, Profile::Baseline | Profile::Event))
    {
        return Err(ModelError::DisallowedProfile(bad.profile));
    }
    if let Some(bad) = inputs.iter().find(|g| g.n() != config.n) {
        return Err(ModelError::ShapeMismatch(format!(
            "snapshot {} has {} services, config expects {}",
            bad.timestamp,
            bad.n(),
            config.n
        )));
    }

    let (mut params, mut state) = init_params(config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(STREAM_SHUFFLE);
    let mut order: Vec<usize> = (0..inputs.len()).collect();
    let mut epoch_mean = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(config.batch_size) {
            // Accumulate in time order so the sum does not depend on the shuffle.
            let mut chunk = chunk.to_vec();
            chunk.sort_by_key(|&i| inputs[i].timestamp);
            let batch: Vec<_> = chunk
                .iter()
                .map(|&i| (&inputs[i].propagation, &inputs[i].target))
                .collect();
            let (loss, grads) = gradients(&params, &batch).map_err(|e| match e {
                ModelError::NonFinite(_) => ModelError::Diverged {
                    epoch: epoch + 1,
                    loss: f64::NAN,
                },
                other => other,
            })?;
            total += loss * chunk.len() as f64;
            adam_step(&mut params, &mut state, &grads, config);
        }
        let mean = total / inputs.len() as f64;
        if !mean.is_finite() || !params.is_finite() {
            return Err(ModelError::Diverged {
                epoch: epoch + 1,
                loss: mean,
            });
        }
        epoch_mean.push(mean);
    }

    let mut report = evaluate_loss(&params, inputs)?;
    report.epoch_mean = epoch_mean;
    Ok((params, report))
}
