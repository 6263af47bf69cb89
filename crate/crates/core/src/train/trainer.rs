use std::fmt::Write as _;
use std::time::Instant;

use ndarray::{Array2, Array3};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use crate::error::{Error, Result};
use crate::eval::{metrics, ConfusionCounts, Metrics};
use crate::models::{Checkpoint, SegmentationModel};
use crate::nn::{apply_updates, Adam, Graph, Mode, ParamStore, Tensor, PROB_EPS};
use crate::preprocess::{transform_features, transform_labels, AugmentationPolicy};

/// One normalized training example, H×W×C features and H×W labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub tile_id: String,
    pub period: String,
    pub features: Array3<f64>,
    pub labels: Array2<u8>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_f1: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub records: Vec<EpochRecord>,
}

impl TrainHistory {
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("epoch\ttrain_loss\tval_loss\tval_f1\tseconds\n");
        for r in &self.records {
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t{:.3}",
                r.epoch, r.train_loss, r.val_loss, r.val_f1, r.seconds
            );
        }
        out
    }

    pub fn from_tsv(text: &str) -> Result<Self> {
        let mut records = Vec::new();
        for line in text.lines().skip(1).filter(|l| !l.trim().is_empty()) {
            let f: Vec<&str> = line.split('\t').collect();
            let bad = || Error::Data(format!("bad history line `{line}`"));
            if f.len() != 5 {
                return Err(bad());
            }
            let num = |s: &str| s.parse::<f64>().map_err(|_| bad());
            records.push(EpochRecord {
                epoch: f[0].parse().map_err(|_| bad())?,
                train_loss: num(f[1])?,
                val_loss: num(f[2])?,
                val_f1: num(f[3])?,
                seconds: num(f[4])?,
            });
        }
        Ok(TrainHistory { records })
    }
}

/// Stack samples into an NCHW batch and a flat target, optionally applying
/// one augmentation draw per sample from `rng`.
pub fn make_batch(
    samples: &[&Sample],
    augment: Option<(&AugmentationPolicy, &mut ChaCha8Rng)>,
) -> Result<(Tensor, Vec<f64>)> {
    let first = samples
        .first()
        .ok_or_else(|| Error::InvalidArgument("empty batch".into()))?;
    let (h, w, c) = first.features.dim();
    let mut data = Vec::with_capacity(samples.len() * h * w * c);
    let mut target = Vec::with_capacity(samples.len() * h * w);
    let mut augment = augment;
    for s in samples {
        if s.features.dim() != (h, w, c) || s.labels.dim() != (h, w) {
            return Err(Error::shape(
                format!("{h}x{w}x{c} features with {h}x{w} labels"),
                format!("{:?} and {:?} for tile {}", s.features.dim(), s.labels.dim(), s.tile_id),
            ));
        }
        let (f, l) = match augment.as_mut() {
            Some((policy, rng)) => {
                let p = policy.draw(&mut **rng);
                (transform_features(&s.features, &p), transform_labels(&s.labels, &p))
            }
            None => (s.features.clone(), s.labels.clone()),
        };
        for ch in 0..c {
            data.extend(f.index_axis(ndarray::Axis(2), ch).iter().copied());
        }
        target.extend(l.iter().map(|&v| f64::from(v)));
    }
    Ok((Tensor::from_vec([samples.len(), c, h, w], data)?, target))
}

/// Rng for augmenting batch `batch` of epoch `epoch`.
pub fn batch_rng(seed: u64, epoch: usize, batch: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((epoch as u64 + 1) << 32) | batch as u64);
    rng
}

/// Weighted loss and confusion counts of `model` on samples (eval mode).
pub fn evaluate_samples(
    model: &SegmentationModel,
    samples: &[Sample],
    cfg: &TrainConfig,
) -> Result<(f64, ConfusionCounts)> {
    let mut loss_sum = 0.0;
    let mut pixels = 0usize;
    let mut counts = ConfusionCounts::default();
    for chunk in samples.chunks(cfg.batch_size.max(1)) {
        let refs: Vec<&Sample> = chunk.iter().collect();
        let (x, y) = make_batch(&refs, None)?;
        let probs = model.predict(&x)?;
        for (&p, &t) in probs.data().iter().zip(&y) {
            let pc = p.clamp(PROB_EPS, 1.0 - PROB_EPS);
            loss_sum -= if t == 1.0 {
                cfg.w_pos * pc.ln()
            } else {
                cfg.w_neg * (1.0 - pc).ln()
            };
            counts.tally(p >= cfg.threshold, t == 1.0);
        }
        pixels += y.len();
    }
    Ok((loss_sum / pixels.max(1) as f64, counts))
}

/// Optimizer loop state. Everything needed to continue a run exactly lives
/// here and in the checkpoint written from it.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub config: TrainConfig,
    pub model: SegmentationModel,
    pub optimizer: Adam,
    /// Completed epochs.
    pub epoch: usize,
    pub history: TrainHistory,
    pub best: Option<(f64, usize, ParamStore)>,
}

impl Trainer {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let model = SegmentationModel::build(config.model_config())?;
        let optimizer = Adam::new(config.adam_config(), model.store());
        Ok(Trainer {
            config,
            model,
            optimizer,
            epoch: 0,
            history: TrainHistory::default(),
            best: None,
        })
    }

    /// Continue from a checkpoint holding optimizer state after
    /// `history.records.len()` completed epochs.
    pub fn resume(
        config: TrainConfig,
        last: Checkpoint,
        best: Option<Checkpoint>,
        history: TrainHistory,
    ) -> Result<Self> {
        config.validate()?;
        if last.model.config() != &config.model_config() {
            return Err(Error::Config(
                "checkpoint model does not match the training configuration".into(),
            ));
        }
        let optimizer = last
            .optimizer
            .ok_or_else(|| Error::Config("checkpoint carries no optimizer state".into()))?;
        let epoch = last.meta.epoch.unwrap_or(0);
        if history.records.len() != epoch {
            return Err(Error::Data(format!(
                "history has {} records but the checkpoint is at epoch {epoch}",
                history.records.len()
            )));
        }
        let best = best.map(|b| {
            (
                b.meta.val_f1.unwrap_or(f64::NAN),
                b.meta.epoch.unwrap_or(0),
                b.model.store().clone(),
            )
        });
        Ok(Trainer {
            config,
            model: last.model,
            optimizer,
            epoch,
            history,
            best,
        })
    }

    /// One optimizer step on a prepared batch; returns the batch loss.
    pub fn step(&mut self, x: Tensor, target: &[f64], batch_index: usize) -> Result<f64> {
        let (loss, grads, updates) = {
            let mut g = Graph::new(self.model.store(), Mode::Train);
            let xv = g.input(x);
            let z = self.model.logits(&mut g, xv);
            let l = g.weighted_bce(z, target, self.config.w_pos, self.config.w_neg);
            let loss = g.value(l).data()[0];
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch: self.epoch,
                    batch: batch_index,
                });
            }
            (loss, g.backward(l), g.take_updates())
        };
        self.optimizer.update(self.model.store_mut(), &grads);
        apply_updates(self.model.store_mut(), updates);
        Ok(loss)
    }

    /// Seeded shuffle, augmented batches, one pass; then validation.
    pub fn run_epoch(&mut self, train: &[Sample], val: &[Sample]) -> Result<EpochRecord> {
        if train.is_empty() {
            return Err(Error::Data("training split is empty".into()));
        }
        let t0 = Instant::now();
        let mut order: Vec<usize> = (0..train.len()).collect();
        let mut shuffle_rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        shuffle_rng.set_stream(self.epoch as u64);
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        let mut seen = 0usize;
        for (b, idx) in order.chunks(self.config.batch_size).enumerate() {
            let refs: Vec<&Sample> = idx.iter().map(|&i| &train[i]).collect();
            let mut rng = batch_rng(self.config.seed, self.epoch, b);
            let (x, y) = make_batch(&refs, Some((&self.config.augmentation, &mut rng)))?;
            let loss = self.step(x, &y, b)?;
            loss_sum += loss * refs.len() as f64;
            seen += refs.len();
        }
        let (val_loss, val_f1) = if val.is_empty() {
            (f64::NAN, f64::NAN)
        } else {
            let (l, c) = evaluate_samples(&self.model, val, &self.config)?;
            (l, metrics(&c)?.f1)
        };
        let epoch = self.epoch;
        self.epoch += 1;
        // without validation data the latest weights count as best
        let improved = match &self.best {
            None => true,
            Some((f1, _, _)) => val.is_empty() || val_f1 > *f1,
        };
        if improved {
            self.best = Some((val_f1, epoch, self.model.store().clone()));
        }
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / seen as f64,
            val_loss,
            val_f1,
            seconds: t0.elapsed().as_secs_f64(),
        };
        self.history.records.push(record.clone());
        Ok(record)
    }

    /// Run the remaining epochs, calling `on_epoch` after each.
    pub fn fit<F>(&mut self, train: &[Sample], val: &[Sample], mut on_epoch: F) -> Result<()>
    where
        F: FnMut(&Trainer, &EpochRecord) -> Result<()>,
    {
        while self.epoch < self.config.epochs {
            let rec = self.run_epoch(train, val)?;
            on_epoch(self, &rec)?;
        }
        Ok(())
    }

    /// The model with the best validation F1 seen so far.
    pub fn best_model(&self) -> Result<SegmentationModel> {
        let mut m = self.model.clone();
        if let Some((_, _, store)) = &self.best {
            m.store_mut().load_from(store)?;
        }
        Ok(m)
    }
}

/// Metrics of a model on a sample set at the configured threshold.
pub fn sample_metrics(model: &SegmentationModel, samples: &[Sample], cfg: &TrainConfig) -> Result<Metrics> {
    let (_, c) = evaluate_samples(model, samples, cfg)?;
    metrics(&c)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{assemble_scenario, synth_scene, ScenarioSpec, SyntheticSceneParams};
    use crate::models::{Arch, CheckpointMeta};
    use crate::preprocess::{fit_percentiles, percentile_normalize};
    use std::path::Path;

    fn samples(n: usize, px: usize, spec: ScenarioSpec) -> Vec<Sample> {
        let scenes: Vec<_> = (0..n)
            .map(|i| {
                synth_scene(&SyntheticSceneParams {
                    seed: 100 + i as u64,
                    tile_px: px,
                    blob_scale: 3.0,
                    ..Default::default()
                })
                .unwrap()
            })
            .collect();
        let chips: Vec<_> = scenes
            .iter()
            .map(|s| assemble_scenario(&s.features, spec).unwrap())
            .collect();
        let stats = fit_percentiles(&chips).unwrap();
        scenes
            .iter()
            .zip(&chips)
            .enumerate()
            .map(|(i, (s, c))| Sample {
                tile_id: format!("t{i}"),
                period: "2019".into(),
                features: percentile_normalize(c, &stats).unwrap().into_parts().1,
                labels: s.mask.labels().clone(),
            })
            .collect()
    }

    fn config() -> TrainConfig {
        TrainConfig {
            base_width: 4,
            depth: 2,
            batch_size: 4,
            epochs: 2,
            learning_rate: 1e-3,
            ..Default::default()
        }
    }

    #[test]
    fn one_epoch_one_record() {
        let data = samples(8, 32, ScenarioSpec::S1);
        let mut t = Trainer::new(TrainConfig { epochs: 1, ..config() }).unwrap();
        t.fit(&data[..6], &data[6..], |_, _| Ok(())).unwrap();
        assert_eq!(t.history.records.len(), 1);
        assert_eq!(t.epoch, 1);
        let back = TrainHistory::from_tsv(&t.history.to_tsv()).unwrap();
        assert_eq!(back.records[0].train_loss, t.history.records[0].train_loss);
    }

    #[test]
    fn repeated_batch_loss_decreases() {
        let data = samples(4, 32, ScenarioSpec::S1);
        let refs: Vec<&Sample> = data.iter().collect();
        let mut t = Trainer::new(config()).unwrap();
        let mut losses = Vec::new();
        for step in 0..=30 {
            let (x, y) = make_batch(&refs, None).unwrap();
            losses.push(t.step(x, &y, step).unwrap());
        }
        assert!(losses[30] < losses[0], "{losses:?}");
    }

    #[test]
    fn checkpoint_round_trip_keeps_val_f1() {
        let data = samples(6, 32, ScenarioSpec::S1);
        let mut t = Trainer::new(TrainConfig { epochs: 1, ..config() }).unwrap();
        t.fit(&data[..4], &data[4..], |_, _| Ok(())).unwrap();
        let before = sample_metrics(&t.model, &data[4..], &t.config).unwrap().f1;
        let ck = Checkpoint::new(CheckpointMeta::new(t.model.config().clone()), t.model.clone());
        let back = Checkpoint::from_bytes(&ck.to_bytes().unwrap(), Path::new("mem")).unwrap();
        let after = sample_metrics(&back.model, &data[4..], &t.config).unwrap().f1;
        assert!((before - after).abs() <= 1e-7);
    }

    #[test]
    fn resume_continues_exactly() {
        let data = samples(6, 32, ScenarioSpec::S1);
        let cfg = TrainConfig { arch: Arch::AttentionUnet, ..config() };
        let mut straight = Trainer::new(cfg.clone()).unwrap();
        straight.fit(&data[..4], &data[4..], |_, _| Ok(())).unwrap();

        let mut first = Trainer::new(cfg.clone()).unwrap();
        first.run_epoch(&data[..4], &data[4..]).unwrap();
        let mut meta = CheckpointMeta::new(first.model.config().clone());
        meta.epoch = Some(first.epoch);
        let ck = Checkpoint {
            meta,
            model: first.model.clone(),
            optimizer: Some(first.optimizer.clone()),
        };
        let ck = Checkpoint::from_bytes(&ck.to_bytes().unwrap(), Path::new("mem")).unwrap();
        let mut resumed = Trainer::resume(cfg, ck, None, first.history.clone()).unwrap();
        resumed.fit(&data[..4], &data[4..], |_, _| Ok(())).unwrap();
        assert_eq!(resumed.model.checksum(), straight.model.checksum());
        assert_eq!(resumed.history.records[1].val_f1, straight.history.records[1].val_f1);
    }

    #[test]
    fn augmented_batches_are_seeded() {
        let data = samples(2, 32, ScenarioSpec::S12);
        let refs: Vec<&Sample> = data.iter().collect();
        let policy = AugmentationPolicy::default();
        let a = make_batch(&refs, Some((&policy, &mut batch_rng(3, 1, 2)))).unwrap();
        let b = make_batch(&refs, Some((&policy, &mut batch_rng(3, 1, 2)))).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.0.shape(), [2, 6, 32, 32]);
        let c = make_batch(&refs, Some((&policy, &mut batch_rng(3, 1, 3)))).unwrap();
        assert_ne!(a.1, c.1);
    }

    #[test]
    fn empty_training_split_rejected() {
        let mut t = Trainer::new(config()).unwrap();
        assert!(matches!(t.run_epoch(&[], &[]), Err(Error::Data(_))));
    }
}
