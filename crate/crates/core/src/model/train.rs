//! Training loop: per-sample corruption augmentation, spectrogram
//! construction, batched Adam updates, and the per-epoch loss log.
//!
//! Every random decision (initialization, shuffling, per-sample
//! corruption) flows from `TrainConfig::seed` through labeled streams,
//! so a rerun with the same seed reproduces parameters bit for bit.
//! Wall-clock time appears only in the log, never in the arithmetic.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{derive_seed, Rng};
use crate::signal::PpmAxis;
use crate::simulator::{corrupt_paired_transients, CorruptionParams, ScanRecord, CORRUPTION_RANGE_MAX};
use crate::spectrogram::{make_spectrogram, SpectrogramConfig};

use super::adam::{adam_step, AdamConfig, AdamState};
use super::loss::LossSpec;
use super::{ModelConfig, ParamBuf, Vit};

const STREAM_INIT: u64 = 0x10;
const STREAM_SHUFFLE: u64 = 0x11;
const STREAM_AUGMENT: u64 = 0x12;

/// Training hyperparameters and data-windowing choices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub epochs: usize,
    /// Upper bounds for the per-sample corruption levels drawn during
    /// training; the `rng_seed` field of the bounds is ignored.
    pub corruption_max: CorruptionParams,
    pub seed: u64,
    /// Transient pairs per training window.
    pub window: usize,
    /// Stride between window offsets within a scan.
    pub window_stride: usize,
    /// Whether the last offset (`n - window`) is included.
    pub include_final_offset: bool,
    pub loss: LossSpec,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 100,
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            epochs: 50,
            corruption_max: CORRUPTION_RANGE_MAX,
            seed: 0,
            window: 40,
            window_stride: 1,
            include_final_offset: false,
            loss: LossSpec::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidArg("batch_size must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::InvalidArg(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.epochs == 0 {
            return Err(Error::InvalidArg("epochs must be at least 1".into()));
        }
        if self.window == 0 || self.window_stride == 0 {
            return Err(Error::InvalidArg("window and window_stride must be at least 1".into()));
        }
        self.corruption_max.validate()
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
        }
    }
}

/// One line of the training log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRow {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub wall_seconds: f64,
}

/// Result of a training run.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ParamBuf<f32>,
    pub log: Vec<EpochRow>,
    /// Validation loss of the freshly initialized model, before any
    /// optimizer step.
    pub initial_val_loss: f64,
    pub adam_steps: u64,
}

/// A training sample is a window into one scan.
#[derive(Debug, Clone, Copy)]
struct SampleRef {
    scan_idx: usize,
    offset: usize,
}

/// Starting offsets of the sliding training windows over `n` transient
/// pairs: every multiple of the stride strictly before `n - window`,
/// plus the final offset when configured. Window 40 with stride 1 over
/// 160 pairs yields 120 samples per scan.
pub fn window_offsets(n: usize, cfg: &TrainConfig) -> Result<Vec<usize>> {
    if cfg.window > n {
        return Err(Error::InvalidArg(format!(
            "window of {} transient pairs exceeds the {} available",
            cfg.window, n
        )));
    }
    let end = n - cfg.window;
    let mut offsets: Vec<usize> = (0..end).step_by(cfg.window_stride).collect();
    if cfg.include_final_offset {
        offsets.push(end);
    }
    Ok(offsets)
}

fn sample_index(scans: &[ScanRecord], cfg: &TrainConfig) -> Result<Vec<SampleRef>> {
    let mut index = Vec::new();
    for (scan_idx, scan) in scans.iter().enumerate() {
        for offset in window_offsets(scan.on_transients.len(), cfg)? {
            index.push(SampleRef { scan_idx, offset });
        }
    }
    if index.is_empty() {
        return Err(Error::InvalidArg("training set yields no sample windows".into()));
    }
    Ok(index)
}

/// Identifies a window stably across epochs, independent of shuffle
/// order, so its corruption stream never collides with another window's.
fn stable_sample_id(scan: &ScanRecord, offset: usize) -> u64 {
    ((scan.scan_id as u64) << 32) | offset as u64
}

struct SampleEval {
    loss: f64,
    d_out: Vec<f32>,
}

fn eval_window(
    vit: &Vit,
    params: &ParamBuf<f32>,
    scan: &ScanRecord,
    offset: usize,
    window: usize,
    spec_cfg: &SpectrogramConfig,
    resolved: &super::loss::ResolvedLoss,
    corruption: Option<&CorruptionParams>,
    want_grad: bool,
) -> Result<(SampleEval, Option<super::forward::Trace<f32>>)> {
    let on = &scan.on_transients[offset..offset + window];
    let off = &scan.off_transients[offset..offset + window];
    let image = match corruption {
        Some(params) => {
            let (on_c, off_c) = corrupt_paired_transients(on, off, params)?;
            make_spectrogram(&on_c, &off_c, spec_cfg)?
        }
        None => make_spectrogram(on, off, spec_cfg)?,
    };
    let trace = vit.forward::<f32>(params, &image.pixels)?;
    let pred = trace.output_f64();
    if want_grad {
        let mut grad = vec![0.0f64; pred.len()];
        let loss = resolved.loss_and_grad(&pred, &scan.target.values, &mut grad);
        let d_out: Vec<f32> = grad.iter().map(|&g| g as f32).collect();
        Ok((SampleEval { loss, d_out }, Some(trace)))
    } else {
        let loss = resolved.loss(&pred, &scan.target.values);
        Ok((SampleEval { loss, d_out: Vec::new() }, None))
    }
}

fn mean_validation_loss(
    vit: &Vit,
    params: &ParamBuf<f32>,
    scans: &[ScanRecord],
    index: &[SampleRef],
    cfg: &TrainConfig,
    spec_cfg: &SpectrogramConfig,
    resolved: &super::loss::ResolvedLoss,
) -> Result<f64> {
    if index.is_empty() {
        return Ok(f64::NAN);
    }
    let mut total = 0.0;
    for s in index {
        let (eval, _) = eval_window(
            vit,
            params,
            &scans[s.scan_idx],
            s.offset,
            cfg.window,
            spec_cfg,
            resolved,
            None,
            false,
        )?;
        total += eval.loss;
    }
    Ok(total / index.len() as f64)
}

/// Checkpoint to continue training from: existing parameters and the
/// optimizer step count they were saved at. The Adam moment vectors are
/// not persisted, so a resumed run restarts them at zero while the bias
/// correction keeps counting from `adam_step`.
#[derive(Debug, Clone)]
pub struct TrainStart {
    pub params: ParamBuf<f32>,
    pub adam_step: u64,
}

/// Trains a model on windowed scans, drawing fresh corruption levels for
/// every training sample on every epoch. Validation windows are scored
/// without added corruption.
pub fn train(
    model_cfg: ModelConfig,
    cfg: &TrainConfig,
    train_scans: &[ScanRecord],
    val_scans: &[ScanRecord],
    axis: &PpmAxis,
    on_epoch: impl FnMut(&EpochRow),
) -> Result<TrainOutcome> {
    train_from(model_cfg, cfg, train_scans, val_scans, axis, None, on_epoch)
}

/// [`train`], optionally continuing from a checkpoint instead of a fresh
/// seed-derived initialization.
pub fn train_from(
    model_cfg: ModelConfig,
    cfg: &TrainConfig,
    train_scans: &[ScanRecord],
    val_scans: &[ScanRecord],
    axis: &PpmAxis,
    start: Option<TrainStart>,
    mut on_epoch: impl FnMut(&EpochRow),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_scans.is_empty() {
        return Err(Error::InvalidArg("training set has no scans".into()));
    }
    if axis.n_points != model_cfg.output_points {
        return Err(Error::LengthMismatch {
            context: "target axis vs model output",
            left: axis.n_points,
            right: model_cfg.output_points,
        });
    }
    let vit = Vit::new(model_cfg)?;
    let fid_points = train_scans[0].on_transients[0].len();
    let spec_cfg = SpectrogramConfig::for_fid_points(fid_points);
    let resolved = cfg.loss.resolve(axis)?;

    let train_index = sample_index(train_scans, cfg)?;
    let val_index = if val_scans.is_empty() { Vec::new() } else { sample_index(val_scans, cfg)? };

    let mut grads = ParamBuf::<f32>::zeros(&vit.layout);
    let mut state = AdamState::<f32>::new(vit.layout.total_len);
    let mut params = match start {
        Some(s) => {
            if s.params.data.len() != vit.layout.total_len {
                return Err(Error::LengthMismatch {
                    context: "checkpoint parameters",
                    left: s.params.data.len(),
                    right: vit.layout.total_len,
                });
            }
            state.step = s.adam_step;
            s.params
        }
        None => ParamBuf::<f32>::init(&vit.layout, derive_seed(cfg.seed, STREAM_INIT)),
    };
    let adam_cfg = cfg.adam();

    let initial_val_loss =
        mean_validation_loss(&vit, &params, val_scans, &val_index, cfg, &spec_cfg, &resolved)?;

    let augment_root = derive_seed(cfg.seed, STREAM_AUGMENT);
    let shuffle_root = derive_seed(cfg.seed, STREAM_SHUFFLE);
    let mut order: Vec<usize> = (0..train_index.len()).collect();
    let mut log = Vec::with_capacity(cfg.epochs);

    for epoch in 1..=cfg.epochs {
        let started = Instant::now();
        let mut shuffle_rng = Rng::new(derive_seed(shuffle_root, epoch as u64));
        shuffle_rng.shuffle(&mut order);
        let epoch_augment = derive_seed(augment_root, epoch as u64);

        let mut epoch_loss = 0.0;
        for (step, batch) in order.chunks(cfg.batch_size).enumerate() {
            grads.data.iter_mut().for_each(|g| *g = 0.0);
            let mut batch_loss = 0.0;
            for &sample_pos in batch {
                let s = train_index[sample_pos];
                let scan = &train_scans[s.scan_idx];
                let sample_seed = derive_seed(epoch_augment, stable_sample_id(scan, s.offset));
                let corruption = CorruptionParams::sample(sample_seed, &cfg.corruption_max, 1.0);
                let (eval, trace) = eval_window(
                    &vit,
                    &params,
                    scan,
                    s.offset,
                    cfg.window,
                    &spec_cfg,
                    &resolved,
                    Some(&corruption),
                    true,
                )?;
                batch_loss += eval.loss;
                vit.backward(&params, &trace.expect("gradient trace"), &eval.d_out, &mut grads)?;
            }
            let inv = 1.0f32 / batch.len() as f32;
            grads.data.iter_mut().for_each(|g| *g *= inv);
            if !(batch_loss / batch.len() as f64).is_finite() {
                return Err(Error::Diverged { epoch, step });
            }
            adam_step(&mut params, &grads, &mut state, &adam_cfg, epoch, step)?;
            epoch_loss += batch_loss;
        }

        let val_loss =
            mean_validation_loss(&vit, &params, val_scans, &val_index, cfg, &spec_cfg, &resolved)?;
        let row = EpochRow {
            epoch,
            train_loss: epoch_loss / train_index.len() as f64,
            val_loss,
            wall_seconds: started.elapsed().as_secs_f64(),
        };
        on_epoch(&row);
        log.push(row);
    }

    Ok(TrainOutcome { params, log, initial_val_loss, adam_steps: state.step })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulator::{synthesize_scan, MetaboliteBasis, SimulatorConfig};

    fn micro_model() -> ModelConfig {
        // Full-size image (the spectrogram front end is fixed at 224),
        // minimal encoder.
        ModelConfig { embed_dim: 16, depth: 1, n_heads: 2, ..ModelConfig::base() }
    }

    fn micro_scans(n: usize, seed: u64) -> (Vec<ScanRecord>, PpmAxis) {
        let axis = PpmAxis::default_synthetic();
        let basis = MetaboliteBasis::default_synthetic();
        let sim = SimulatorConfig { n_transients: 8, fid_points: 512, ..SimulatorConfig::default() };
        let scans = (0..n)
            .map(|i| synthesize_scan(&basis, &axis, &sim, i as u32, derive_seed(seed, i as u64)).unwrap())
            .collect();
        (scans, axis)
    }

    fn micro_train_cfg() -> TrainConfig {
        TrainConfig {
            batch_size: 3,
            epochs: 2,
            window: 4,
            window_stride: 2,
            learning_rate: 1e-4,
            seed: 99,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn optimizer_step_count_is_ceil_of_samples_over_batch() {
        let (scans, axis) = micro_scans(2, 1);
        // 8 transients, window 4, stride 2: offsets {0, 2} per scan,
        // 4 samples total; batch 3 gives ceil(4/3) = 2 steps per epoch.
        let cfg = micro_train_cfg();
        let outcome = train(micro_model(), &cfg, &scans, &[], &axis, |_| {}).unwrap();
        assert_eq!(outcome.adam_steps, 2 * cfg.epochs as u64);
        assert_eq!(outcome.log.len(), cfg.epochs);
        assert!(outcome.initial_val_loss.is_nan(), "no validation set was given");
        assert!(outcome.log.iter().all(|r| r.train_loss.is_finite()));
    }

    #[test]
    fn identical_seeds_reproduce_the_loss_log_and_parameters() {
        let (scans, axis) = micro_scans(2, 2);
        let (val, _) = micro_scans(1, 3);
        let cfg = micro_train_cfg();
        let a = train(micro_model(), &cfg, &scans, &val, &axis, |_| {}).unwrap();
        let b = train(micro_model(), &cfg, &scans, &val, &axis, |_| {}).unwrap();
        assert_eq!(a.params.data, b.params.data);
        assert_eq!(a.initial_val_loss, b.initial_val_loss);
        for (ra, rb) in a.log.iter().zip(&b.log) {
            // Wall time legitimately differs between runs; the losses
            // may not.
            assert_eq!(ra.epoch, rb.epoch);
            assert_eq!(ra.train_loss, rb.train_loss);
            assert_eq!(ra.val_loss, rb.val_loss);
        }
        // A different seed must change the trajectory.
        let c = train(micro_model(), &TrainConfig { seed: 100, ..cfg }, &scans, &val, &axis, |_| {})
            .unwrap();
        assert_ne!(a.log[0].train_loss, c.log[0].train_loss);
    }

    #[test]
    fn exploding_learning_rate_reports_divergence_location() {
        let (scans, axis) = micro_scans(1, 4);
        let cfg = TrainConfig { learning_rate: 1e30, epochs: 3, ..micro_train_cfg() };
        let err = train(micro_model(), &cfg, &scans, &[], &axis, |_| {}).unwrap_err();
        assert!(matches!(err, Error::Diverged { .. }), "{err:?}");
    }

    #[test]
    fn mismatched_axis_is_rejected() {
        let (scans, _) = micro_scans(1, 5);
        let bad_axis = PpmAxis { n_points: 1024, ..PpmAxis::default_synthetic() };
        let err = train(micro_model(), &micro_train_cfg(), &scans, &[], &bad_axis, |_| {})
            .unwrap_err();
        assert!(matches!(err, Error::LengthMismatch { .. }));
    }
}
