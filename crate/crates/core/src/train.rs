//! Training loop: window dataset assembly, class-balanced batching with
//! mirror and jitter augmentation, and AdaDelta updates.
//!
//! Batches are drawn in equal thirds from the background, wheelchair, and
//! walker window pools, which counters the heavy background dominance of
//! dense per-beam labeling. All randomness derives from one seed.

use ndarray::Array2;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataio::AnnotatedFrame;
use crate::error::Error;
use crate::geometry::SensorConfig;
use crate::nn::{loss_and_grads, AdaDelta, Model, TargetBatch};
use crate::preprocess::{self, PreprocessConfig, TrainingTarget};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Must be divisible by 3 (one third per class pool).
    pub batch_size: usize,
    /// Optimizer steps per epoch; `None` sizes an epoch so the object windows
    /// are seen about once.
    pub steps_per_epoch: Option<usize>,
    /// Multiplicative regression target noise, 0 disables.
    pub noise_scale: f64,
    /// Probability of mirroring a drawn window.
    pub flip_prob: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 5,
            batch_size: 192,
            steps_per_epoch: None,
            noise_scale: 0.05,
            flip_prob: 0.5,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochStats>,
}

/// All windows of a frame set, flattened, with per-class index pools.
pub struct WindowDataset {
    samples: Vec<f32>,
    window_len: usize,
    targets: Vec<TrainingTarget>,
    pools: [Vec<usize>; 3],
}

impl WindowDataset {
    pub fn build(
        frames: &[AnnotatedFrame],
        sensor: &SensorConfig,
        cfg: &PreprocessConfig,
    ) -> Self {
        let mut samples = Vec::new();
        let mut targets = Vec::new();
        let mut pools: [Vec<usize>; 3] = Default::default();
        for frame in frames {
            let mut scan = frame.scan.clone();
            scan.sanitize(sensor);
            for w in preprocess::cut_all_windows(&scan, sensor, cfg) {
                let t = preprocess::make_target(&w, &frame.annotations);
                pools[t.class_index()].push(targets.len());
                samples.extend(w.samples.iter().map(|&s| s as f32));
                targets.push(t);
            }
        }
        WindowDataset {
            samples,
            window_len: cfg.n,
            targets,
            pools,
        }
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn pool_sizes(&self) -> [usize; 3] {
        [self.pools[0].len(), self.pools[1].len(), self.pools[2].len()]
    }

    fn object_windows(&self) -> usize {
        self.pools[1].len() + self.pools[2].len()
    }

    fn window(&self, idx: usize) -> &[f32] {
        &self.samples[idx * self.window_len..(idx + 1) * self.window_len]
    }

    /// Draw a class-balanced batch with flip and jitter augmentation.
    fn sample_batch(
        &self,
        batch_size: usize,
        rng: &mut ChaCha8Rng,
        noise_scale: f64,
        flip_prob: f64,
    ) -> (Array2<f32>, TargetBatch) {
        let mut input = Array2::<f32>::zeros((batch_size, self.window_len));
        let mut targets = TargetBatch {
            class_idx: Vec::with_capacity(batch_size),
            offsets: Vec::with_capacity(batch_size),
            mask: Vec::with_capacity(batch_size),
        };
        let per_pool = batch_size / 3;
        for b in 0..batch_size {
            let want = (b / per_pool).min(2);
            // Empty object pools fall back to the background pool.
            let pool = if self.pools[want].is_empty() { 0 } else { want };
            let idx = self.pools[pool][rng.gen_range(0..self.pools[pool].len())];
            let mut t = self.targets[idx];
            let flip = rng.gen_bool(flip_prob);
            t = preprocess::jitter_target(&t, rng, noise_scale);
            if flip {
                t.offset.1 = -t.offset.1;
            }
            let w = self.window(idx);
            for (j, &s) in w.iter().enumerate() {
                let col = if flip { self.window_len - 1 - j } else { j };
                input[[b, col]] = s;
            }
            targets.class_idx.push(t.class_index());
            targets.offsets.push(t.offset);
            targets.mask.push(t.regression_mask);
        }
        (input, targets)
    }

    /// Deterministic evaluation batches covering the dataset in index order.
    fn eval_batches(
        &self,
        batch_size: usize,
        max_batches: usize,
    ) -> Vec<(Array2<f32>, TargetBatch)> {
        let mut out = Vec::new();
        let mut start = 0;
        while start < self.len() && out.len() < max_batches {
            let end = (start + batch_size).min(self.len());
            let mut input = Array2::<f32>::zeros((end - start, self.window_len));
            let mut targets = TargetBatch {
                class_idx: Vec::new(),
                offsets: Vec::new(),
                mask: Vec::new(),
            };
            for (b, idx) in (start..end).enumerate() {
                for (j, &s) in self.window(idx).iter().enumerate() {
                    input[[b, j]] = s;
                }
                let t = self.targets[idx];
                targets.class_idx.push(t.class_index());
                targets.offsets.push(t.offset);
                targets.mask.push(t.regression_mask);
            }
            out.push((input, targets));
            start = end;
        }
        out
    }
}

/// Mean loss over deterministic batches, inference mode.
pub fn validation_loss(model: &mut Model<f32>, data: &WindowDataset, batch_size: usize) -> f64 {
    let batches = data.eval_batches(batch_size, 32);
    if batches.is_empty() {
        return 0.0;
    }
    let mut total = 0.0;
    for (input, targets) in &batches {
        let (logits, offsets) = model.forward(input, false).expect("shape checked");
        total += loss_and_grads(&logits, &offsets, targets).0;
    }
    total / batches.len() as f64
}

/// Train the model in place. Deterministic per seed.
pub fn train(
    model: &mut Model<f32>,
    train_data: &WindowDataset,
    val_data: &WindowDataset,
    cfg: &TrainConfig,
) -> Result<TrainReport, Error> {
    if cfg.batch_size == 0 || cfg.batch_size % 3 != 0 {
        return Err(Error::InvalidConfig(format!(
            "batch size must be a positive multiple of 3, got {}",
            cfg.batch_size
        )));
    }
    if train_data.is_empty() {
        return Err(Error::InvalidConfig("empty training set".into()));
    }
    let steps = cfg.steps_per_epoch.unwrap_or_else(|| {
        (train_data.object_windows() * 3 / cfg.batch_size.max(1)).max(1)
    });
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    model.set_rng_seed(cfg.seed ^ 0x5851_f42d_4c95_7f2d);
    let mut opt = AdaDelta::<f32>::default_params();
    let mut report = TrainReport::default();
    let mut step_count = 0usize;

    for epoch in 0..cfg.epochs {
        let mut epoch_loss = 0.0;
        for _ in 0..steps {
            let (input, targets) =
                train_data.sample_batch(cfg.batch_size, &mut rng, cfg.noise_scale, cfg.flip_prob);
            let (logits, offsets) = model.forward(&input, true)?;
            let (loss, dlogits, doffsets) = loss_and_grads(&logits, &offsets, &targets);
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss(step_count));
            }
            epoch_loss += loss;
            model.backward(&dlogits, &doffsets);
            opt.step(model);
            step_count += 1;
        }
        report.epochs.push(EpochStats {
            epoch,
            train_loss: epoch_loss / steps as f64,
            val_loss: validation_loss(model, val_data, cfg.batch_size),
        });
    }
    Ok(report)
}
