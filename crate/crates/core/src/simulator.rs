//! Synthetic edited-spectroscopy scan generator.
//!
//! A scan holds 160 edit-ON and 160 edit-OFF transients built from a small
//! metabolite basis, degraded by thermal noise and by amplitude, frequency,
//! and phase corruption. The clean OFF-ON difference spectrum is kept as
//! the regression target.
//!
//! All randomness flows from one seed per scan through fixed derived
//! streams, so any part of a scan (including the water reference used at
//! quantification time) can be regenerated independently:
//! stream 0 per-scan basis jitter, stream 1 thermal noise, stream 2
//! corruption draws, stream 3 corruption level sampling.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;

use crate::error::{Error, Result};
use crate::rng::{derive_seed, Rng};
use crate::signal::{
    apodize, difference_fid, downsample_nearest, fid_to_spectrum, normalize_max_abs, ComplexFid,
    EditLabel, PpmAxis, Spectrum,
};

/// RNG stream tags; see the module docs.
const STREAM_JITTER: u64 = 0;
const STREAM_NOISE: u64 = 1;
const STREAM_CORRUPTION: u64 = 2;
const STREAM_LEVELS: u64 = 3;

/// One resonance in the metabolite basis.
///
/// `on_scale` and `off_scale` multiply `amplitude` under the two editing
/// conditions; a peak with equal scales cancels in the difference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasisPeak {
    pub name: String,
    pub center_ppm: f64,
    pub amplitude: f64,
    pub t2_seconds: f64,
    pub on_scale: f64,
    pub off_scale: f64,
}

/// The simulated metabolite content of a scan.
///
/// `water_amplitude` and `water_t2_seconds` describe the separate
/// unsuppressed water acquisition used as a quantification reference; they
/// are simulator conventions, like every other default here.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetaboliteBasis {
    pub peaks: Vec<BasisPeak>,
    pub water_amplitude: f64,
    pub water_t2_seconds: f64,
}

impl Default for MetaboliteBasis {
    fn default() -> Self {
        Self::default_synthetic()
    }
}

impl MetaboliteBasis {
    /// Default basis producing a positive edited GABA resonance at
    /// 3.0 ppm, a positive Glx doublet at 3.7/3.8 ppm, a creatine singlet
    /// that cancels in the difference, an inverted NAA resonance, and a
    /// residual water line that also cancels.
    pub fn default_synthetic() -> Self {
        let peak = |name: &str, ppm: f64, amp: f64, t2: f64, on: f64, off: f64| BasisPeak {
            name: name.to_string(),
            center_ppm: ppm,
            amplitude: amp,
            t2_seconds: t2,
            on_scale: on,
            off_scale: off,
        };
        MetaboliteBasis {
            peaks: vec![
                peak("gaba", 3.0, 1.0, 0.09, -0.5, 0.5),
                peak("glx_a", 3.7, 0.6, 0.10, 0.2, 1.0),
                peak("glx_b", 3.8, 0.6, 0.10, 0.2, 1.0),
                peak("cr", 3.0, 6.0, 0.12, 1.0, 1.0),
                peak("naa", 2.02, 8.0, 0.15, 1.5, 1.0),
                peak("water_residual", 4.7, 3.0, 0.05, 1.0, 1.0),
            ],
            water_amplitude: 1000.0,
            water_t2_seconds: 0.05,
        }
    }

    /// Checks the basis against an axis: positive decay constants and all
    /// resonances on the axis.
    pub fn validate(&self, axis: &PpmAxis) -> Result<()> {
        if self.peaks.is_empty() {
            return Err(Error::InvalidArg("metabolite basis has no peaks".into()));
        }
        let lo = axis.ppm_at(axis.n_points - 1);
        let hi = axis.ppm_at(0);
        for p in &self.peaks {
            if !(p.t2_seconds > 0.0) {
                return Err(Error::InvalidArg(format!(
                    "peak {}: t2 must be positive, got {}",
                    p.name, p.t2_seconds
                )));
            }
            if p.center_ppm < lo || p.center_ppm > hi {
                return Err(Error::InvalidArg(format!(
                    "peak {}: {} ppm outside axis [{lo}, {hi}]",
                    p.name, p.center_ppm
                )));
            }
        }
        if !(self.water_t2_seconds > 0.0) || !(self.water_amplitude >= 0.0) {
            return Err(Error::InvalidArg("water reference parameters out of range".into()));
        }
        Ok(())
    }
}

/// Per-scan random variation of the basis, uniform in +/- each bound.
///
/// Without it every scan would share one target and training would reduce
/// to memorizing a single spectrum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BasisJitter {
    /// Relative amplitude range (0.2 = +/-20%).
    pub amplitude_frac: f64,
    /// Absolute resonance shift range in ppm.
    pub shift_ppm: f64,
    /// Relative decay-time range.
    pub t2_frac: f64,
}

impl Default for BasisJitter {
    fn default() -> Self {
        BasisJitter { amplitude_frac: 0.2, shift_ppm: 0.02, t2_frac: 0.2 }
    }
}

/// Corruption levels for one scan.
///
/// Each quantity has a per-transient standard deviation (`*_base`) and a
/// per-scan mean-offset standard deviation (`*_scan_var`): transient
/// deviations are drawn around one scan-level offset that is itself drawn
/// around zero. Amplitude is in percent gain, frequency in Hz, phase in
/// degrees. `rng_seed` doubles as the scan's master seed, so a stored
/// corrupted scan can be reproduced in full from this struct plus the
/// shared configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorruptionParams {
    pub amp_base: f64,
    pub amp_scan_var: f64,
    pub freq_base_hz: f64,
    pub freq_scan_var_hz: f64,
    pub phase_base_deg: f64,
    pub phase_scan_var_deg: f64,
    pub rng_seed: u64,
}

/// Largest admissible corruption levels, matching the augmentation ranges
/// the model is trained over.
pub const CORRUPTION_RANGE_MAX: CorruptionParams = CorruptionParams {
    amp_base: 5.0,
    amp_scan_var: 3.0,
    freq_base_hz: 4.0,
    freq_scan_var_hz: 3.0,
    phase_base_deg: 3.0,
    phase_scan_var_deg: 3.0,
    rng_seed: 0,
};

impl CorruptionParams {
    pub fn zero(rng_seed: u64) -> Self {
        CorruptionParams {
            amp_base: 0.0,
            amp_scan_var: 0.0,
            freq_base_hz: 0.0,
            freq_scan_var_hz: 0.0,
            phase_base_deg: 0.0,
            phase_scan_var_deg: 0.0,
            rng_seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("amp_base", self.amp_base, CORRUPTION_RANGE_MAX.amp_base),
            ("amp_scan_var", self.amp_scan_var, CORRUPTION_RANGE_MAX.amp_scan_var),
            ("freq_base_hz", self.freq_base_hz, CORRUPTION_RANGE_MAX.freq_base_hz),
            (
                "freq_scan_var_hz",
                self.freq_scan_var_hz,
                CORRUPTION_RANGE_MAX.freq_scan_var_hz,
            ),
            ("phase_base_deg", self.phase_base_deg, CORRUPTION_RANGE_MAX.phase_base_deg),
            (
                "phase_scan_var_deg",
                self.phase_scan_var_deg,
                CORRUPTION_RANGE_MAX.phase_scan_var_deg,
            ),
        ];
        for (name, value, max) in fields {
            if !(0.0..=max).contains(&value) {
                return Err(Error::InvalidArg(format!(
                    "corruption {name} = {value} outside [0, {max}]"
                )));
            }
        }
        Ok(())
    }

    /// Samples levels uniformly in [0, max*scale] for each field, with the
    /// draws taken from the scan's level stream.
    pub fn sample(scan_seed: u64, max: &CorruptionParams, scale: f64) -> Self {
        let mut rng = Rng::new(derive_seed(scan_seed, STREAM_LEVELS));
        let mut draw = |hi: f64| rng.uniform_in(0.0, hi * scale);
        CorruptionParams {
            amp_base: draw(max.amp_base),
            amp_scan_var: draw(max.amp_scan_var),
            freq_base_hz: draw(max.freq_base_hz),
            freq_scan_var_hz: draw(max.freq_scan_var_hz),
            phase_base_deg: draw(max.phase_base_deg),
            phase_scan_var_deg: draw(max.phase_scan_var_deg),
            rng_seed: scan_seed,
        }
    }
}

/// One simulated scan: paired transient blocks plus the clean target.
#[derive(Debug, Clone, PartialEq)]
pub struct ScanRecord {
    pub scan_id: u32,
    pub on_transients: Vec<ComplexFid>,
    pub off_transients: Vec<ComplexFid>,
    /// Clean OFF-ON difference spectrum, max-abs normalized.
    pub target: Spectrum,
    pub corruption: CorruptionParams,
}

/// A sliding-window view into a scan: `window` transients per sub-signal
/// starting at the same offset in both blocks, sharing the scan's target.
#[derive(Debug, Clone, Copy)]
pub struct SampleWindow<'a> {
    pub scan_id: u32,
    pub offset: usize,
    pub on_window: &'a [ComplexFid],
    pub off_window: &'a [ComplexFid],
    pub target: &'a Spectrum,
}

/// Scan synthesis settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimulatorConfig {
    /// Transients per sub-signal (the scan holds twice this).
    pub n_transients: usize,
    /// Time-domain samples per transient.
    pub fid_points: usize,
    /// Std of the complex Gaussian thermal noise per sample component.
    pub noise_std: f64,
    /// Exponential line broadening applied to the clean target (and, by
    /// the averaging baselines, to their reconstructions) in Hz.
    pub target_apodize_hz: f64,
    pub jitter: BasisJitter,
}

impl Default for SimulatorConfig {
    fn default() -> Self {
        SimulatorConfig {
            n_transients: 160,
            fid_points: 2048,
            noise_std: 1.0,
            target_apodize_hz: 3.0,
            jitter: BasisJitter::default(),
        }
    }
}

impl SimulatorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_transients == 0 {
            return Err(Error::InvalidArg("n_transients must be at least 1".into()));
        }
        if self.fid_points < 2 {
            return Err(Error::InvalidArg("fid_points must be at least 2".into()));
        }
        if !(self.noise_std >= 0.0) {
            return Err(Error::InvalidArg(format!(
                "noise_std must be non-negative, got {}",
                self.noise_std
            )));
        }
        if !(self.target_apodize_hz >= 0.0) {
            return Err(Error::InvalidArg("target_apodize_hz must be non-negative".into()));
        }
        Ok(())
    }
}

/// Applies the per-scan basis variation for `scan_seed`.
///
/// Draws happen in a fixed order (three per peak, then one for water), so
/// the jittered basis is reproducible from the seed alone.
pub fn jittered_basis(
    basis: &MetaboliteBasis,
    jitter: &BasisJitter,
    scan_seed: u64,
) -> MetaboliteBasis {
    let mut rng = Rng::new(derive_seed(scan_seed, STREAM_JITTER));
    let peaks = basis
        .peaks
        .iter()
        .map(|p| {
            let amp_mult = 1.0 + rng.uniform_in(-jitter.amplitude_frac, jitter.amplitude_frac);
            let shift = rng.uniform_in(-jitter.shift_ppm, jitter.shift_ppm);
            let t2_mult = 1.0 + rng.uniform_in(-jitter.t2_frac, jitter.t2_frac);
            BasisPeak {
                name: p.name.clone(),
                center_ppm: p.center_ppm + shift,
                amplitude: p.amplitude * amp_mult,
                t2_seconds: p.t2_seconds * t2_mult,
                on_scale: p.on_scale,
                off_scale: p.off_scale,
            }
        })
        .collect();
    let water_mult = 1.0 + rng.uniform_in(-jitter.amplitude_frac, jitter.amplitude_frac);
    MetaboliteBasis {
        peaks,
        water_amplitude: basis.water_amplitude * water_mult,
        water_t2_seconds: basis.water_t2_seconds,
    }
}

/// Noiseless sum-of-resonances FID under one editing condition.
///
/// Each peak contributes `scale * amplitude * e^{i 2 pi f t} e^{-t/T2}`
/// where `f` is the peak's offset from the axis centre in Hz; the product
/// is accumulated with a per-sample complex recurrence.
fn clean_fid(
    basis: &MetaboliteBasis,
    axis: &PpmAxis,
    fid_points: usize,
    label: EditLabel,
) -> Result<ComplexFid> {
    let dwell = 1.0 / axis.sweep_width_hz;
    let mut samples = vec![Complex64::new(0.0, 0.0); fid_points];
    for p in &basis.peaks {
        let scale = match label {
            EditLabel::On => p.on_scale,
            EditLabel::Off => p.off_scale,
        };
        let freq_hz = (p.center_ppm - axis.center_ppm) * axis.transmitter_hz * 1e-6;
        let step = Complex64::from_polar((-dwell / p.t2_seconds).exp(), TAU * freq_hz * dwell);
        let mut z = Complex64::new(p.amplitude * scale, 0.0);
        for s in samples.iter_mut() {
            *s += z;
            z *= step;
        }
    }
    ComplexFid::new(samples, dwell, axis.transmitter_hz, Some(label))
}

/// The unsuppressed water reference FID for a (jittered) basis: a single
/// noiseless resonance at the axis centre.
pub fn water_reference(basis: &MetaboliteBasis, axis: &PpmAxis, fid_points: usize) -> Result<ComplexFid> {
    let dwell = 1.0 / axis.sweep_width_hz;
    let step = Complex64::from_polar((-dwell / basis.water_t2_seconds).exp(), 0.0);
    let mut z = Complex64::new(basis.water_amplitude, 0.0);
    let mut samples = Vec::with_capacity(fid_points);
    for _ in 0..fid_points {
        samples.push(z);
        z *= step;
    }
    ComplexFid::new(samples, dwell, axis.transmitter_hz, None)
}

/// Real spectrum of a FID on `axis`, evaluating the transform at the FID's
/// own length first and nearest-neighbour downsampling when the FID is
/// longer than the axis.
pub fn spectrum_on_axis(fid: &ComplexFid, axis: &PpmAxis) -> Result<Spectrum> {
    if fid.len() <= axis.n_points {
        fid_to_spectrum(fid, axis)
    } else {
        let fine = PpmAxis::new(
            fid.len(),
            axis.center_ppm,
            axis.sweep_width_hz,
            axis.transmitter_hz,
        )?;
        let spec = fid_to_spectrum(fid, &fine)?;
        Spectrum::new(downsample_nearest(&spec.values, axis.n_points)?, *axis)
    }
}

/// Clean, apodized, normalized OFF-ON difference spectrum for a basis.
pub fn clean_target(
    basis: &MetaboliteBasis,
    axis: &PpmAxis,
    cfg: &SimulatorConfig,
) -> Result<Spectrum> {
    let on = clean_fid(basis, axis, cfg.fid_points, EditLabel::On)?;
    let off = clean_fid(basis, axis, cfg.fid_points, EditLabel::Off)?;
    let diff = apodize(&difference_fid(&on, &off)?, cfg.target_apodize_hz);
    let spec = spectrum_on_axis(&diff, axis)?;
    let (values, _) = normalize_max_abs(&spec.values)?;
    Spectrum::new(values, *axis)
}

/// Builds one uncorrupted scan: jittered basis, clean transients plus
/// thermal noise, and the clean difference target. The returned record
/// carries zero corruption levels with `rng_seed = seed`; corruption is a
/// separate step.
pub fn synthesize_scan(
    basis: &MetaboliteBasis,
    axis: &PpmAxis,
    cfg: &SimulatorConfig,
    scan_id: u32,
    seed: u64,
) -> Result<ScanRecord> {
    cfg.validate()?;
    let scan_basis = jittered_basis(basis, &cfg.jitter, seed);
    scan_basis.validate(axis)?;

    let clean_on = clean_fid(&scan_basis, axis, cfg.fid_points, EditLabel::On)?;
    let clean_off = clean_fid(&scan_basis, axis, cfg.fid_points, EditLabel::Off)?;
    let target = clean_target(&scan_basis, axis, cfg)?;

    let mut noise = Rng::new(derive_seed(seed, STREAM_NOISE));
    let mut noisy_block = |clean: &ComplexFid| -> Vec<ComplexFid> {
        (0..cfg.n_transients)
            .map(|_| {
                let samples = clean
                    .samples
                    .iter()
                    .map(|s| {
                        s + Complex64::new(
                            noise.normal_scaled(0.0, cfg.noise_std),
                            noise.normal_scaled(0.0, cfg.noise_std),
                        )
                    })
                    .collect();
                ComplexFid { samples, ..clean.clone() }
            })
            .collect()
    };
    let on_transients = noisy_block(&clean_on);
    let off_transients = noisy_block(&clean_off);

    Ok(ScanRecord {
        scan_id,
        on_transients,
        off_transients,
        target,
        corruption: CorruptionParams::zero(seed),
    })
}

/// Degrades paired transient blocks with amplitude, frequency, and phase
/// noise; the core of [`apply_corruption`], also reusable on window
/// slices for training-time augmentation.
///
/// For transient `t` with time vector `tau`:
/// `samples <- gain_t * e^{i phi_t} * e^{i 2 pi df_t tau} * samples`, with
/// `df_t ~ N(off_f, freq_base)`, `phi_t ~ N(off_phi, phase_base)` (degrees),
/// `gain_t = 1 + N(off_a, amp_base)/100`, and each scan offset
/// `off_* ~ N(0, *_scan_var)`. All-zero levels reproduce the inputs bit
/// for bit.
pub fn corrupt_paired_transients(
    on: &[ComplexFid],
    off: &[ComplexFid],
    params: &CorruptionParams,
) -> Result<(Vec<ComplexFid>, Vec<ComplexFid>)> {
    params.validate()?;
    let mut rng = Rng::new(derive_seed(params.rng_seed, STREAM_CORRUPTION));
    let off_a = rng.normal_scaled(0.0, params.amp_scan_var);
    let off_f = rng.normal_scaled(0.0, params.freq_scan_var_hz);
    let off_phi = rng.normal_scaled(0.0, params.phase_scan_var_deg);

    let mut corrupt_block = |block: &[ComplexFid]| -> Vec<ComplexFid> {
        block
            .iter()
            .map(|fid| {
                let gain = 1.0 + rng.normal_scaled(off_a, params.amp_base) / 100.0;
                let df = rng.normal_scaled(off_f, params.freq_base_hz);
                let phi = rng.normal_scaled(off_phi, params.phase_base_deg).to_radians();
                let step = Complex64::from_polar(1.0, TAU * df * fid.dwell_time);
                let mut w = Complex64::from_polar(1.0, phi) * gain;
                let samples = fid
                    .samples
                    .iter()
                    .map(|s| {
                        let v = s * w;
                        w *= step;
                        v
                    })
                    .collect();
                ComplexFid { samples, ..fid.clone() }
            })
            .collect()
    };
    let corrupted_on = corrupt_block(on);
    let corrupted_off = corrupt_block(off);
    Ok((corrupted_on, corrupted_off))
}

/// Degrades every transient of a scan; the target is untouched.
pub fn apply_corruption(scan: &ScanRecord, params: &CorruptionParams) -> Result<ScanRecord> {
    let (on_transients, off_transients) =
        corrupt_paired_transients(&scan.on_transients, &scan.off_transients, params)?;
    Ok(ScanRecord {
        scan_id: scan.scan_id,
        on_transients,
        off_transients,
        target: scan.target.clone(),
        corruption: *params,
    })
}

/// Stride-1 sliding windows over the paired transient blocks.
///
/// Offsets run 0..(N - window), exclusive of the final position by
/// default; `include_final_offset` adds it, turning the count from
/// N - window into N - window + 1.
pub fn sliding_window_samples(
    scan: &ScanRecord,
    window: usize,
    include_final_offset: bool,
) -> Result<Vec<SampleWindow<'_>>> {
    let n = scan.on_transients.len();
    if window == 0 {
        return Err(Error::InvalidArg("window size must be at least 1".into()));
    }
    if n != scan.off_transients.len() {
        return Err(Error::LengthMismatch {
            context: "ON vs OFF transient counts",
            left: n,
            right: scan.off_transients.len(),
        });
    }
    if n < window {
        return Err(Error::InvalidArg(format!(
            "scan has {n} transients per sub-signal, window needs {window}"
        )));
    }
    let n_offsets = n - window + usize::from(include_final_offset);
    Ok((0..n_offsets)
        .map(|offset| SampleWindow {
            scan_id: scan.scan_id,
            offset,
            on_window: &scan.on_transients[offset..offset + window],
            off_window: &scan.off_transients[offset..offset + window],
            target: &scan.target,
        })
        .collect())
}

/// Paired ON/OFF quarter of a scan's transients, 1-based group index.
///
/// Group g covers transients [(g-1)*N/4, g*N/4) of each sub-signal, which
/// for 160 transients per block is 40 ON plus 40 OFF per group.
pub fn group_slices(scan: &ScanRecord, group: usize) -> Result<(&[ComplexFid], &[ComplexFid])> {
    let n = scan.on_transients.len();
    if !(1..=4).contains(&group) {
        return Err(Error::InvalidArg(format!("group must be 1..=4, got {group}")));
    }
    if n % 4 != 0 {
        return Err(Error::InvalidArg(format!(
            "transient count {n} is not divisible into 4 groups"
        )));
    }
    let q = n / 4;
    let lo = (group - 1) * q;
    let hi = group * q;
    Ok((&scan.on_transients[lo..hi], &scan.off_transients[lo..hi]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::mean_fid;
    use approx::assert_abs_diff_eq;

    fn small_cfg() -> SimulatorConfig {
        SimulatorConfig {
            n_transients: 8,
            fid_points: 256,
            noise_std: 0.0,
            target_apodize_hz: 3.0,
            jitter: BasisJitter::default(),
        }
    }

    fn small_axis() -> PpmAxis {
        PpmAxis::new(512, 4.7, 2000.0, 127.7e6).unwrap()
    }

    #[test]
    fn noiseless_scan_has_identical_transients_and_exact_target() {
        let basis = MetaboliteBasis::default_synthetic();
        let axis = small_axis();
        let cfg = small_cfg();
        let scan = synthesize_scan(&basis, &axis, &cfg, 0, 11).unwrap();
        for t in &scan.on_transients[1..] {
            assert_eq!(t.samples, scan.on_transients[0].samples);
        }
        // Reconstructing through the same averaging path reproduces the
        // stored target exactly up to shared normalization.
        let on_mean = mean_fid(&scan.on_transients).unwrap();
        let off_mean = mean_fid(&scan.off_transients).unwrap();
        let diff = apodize(&difference_fid(&on_mean, &off_mean).unwrap(), cfg.target_apodize_hz);
        let spec = spectrum_on_axis(&diff, &axis).unwrap();
        let (values, _) = normalize_max_abs(&spec.values).unwrap();
        for (a, b) in values.iter().zip(&scan.target.values) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn default_target_peaks_sit_in_their_windows() {
        let basis = MetaboliteBasis::default_synthetic();
        let axis = PpmAxis::default_synthetic();
        let cfg = SimulatorConfig { n_transients: 1, noise_std: 0.0, ..Default::default() };
        // No jitter: the canonical basis itself must satisfy the layout.
        let cfg = SimulatorConfig {
            jitter: BasisJitter { amplitude_frac: 0.0, shift_ppm: 0.0, t2_frac: 0.0 },
            ..cfg
        };
        let scan = synthesize_scan(&basis, &axis, &cfg, 0, 5).unwrap();
        let t = &scan.target;
        // The highest positive value lies in the edited 2.8-3.2 window.
        let (imax, _) = t
            .values
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .unwrap();
        let p = axis.ppm_at(imax);
        assert!((2.8..=3.2).contains(&p), "global positive max at {p} ppm");
        // And both edited windows contain clearly positive signal.
        let gaba_max = t.window(2.8, 3.2).unwrap().iter().cloned().fold(f64::MIN, f64::max);
        let glx_max = t.window(3.55, 3.95).unwrap().iter().cloned().fold(f64::MIN, f64::max);
        assert!(gaba_max > 0.05, "gaba {gaba_max}");
        assert!(glx_max > 0.05, "glx {glx_max}");
        assert!(gaba_max > glx_max);
    }

    #[test]
    fn same_seed_reproduces_scan_bit_for_bit() {
        let basis = MetaboliteBasis::default_synthetic();
        let axis = small_axis();
        let cfg = SimulatorConfig { noise_std: 2.0, ..small_cfg() };
        let a = synthesize_scan(&basis, &axis, &cfg, 3, 99).unwrap();
        let b = synthesize_scan(&basis, &axis, &cfg, 3, 99).unwrap();
        assert_eq!(a, b);
        let c = synthesize_scan(&basis, &axis, &cfg, 3, 100).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn zero_corruption_is_bitwise_identity() {
        let basis = MetaboliteBasis::default_synthetic();
        let axis = small_axis();
        let cfg = SimulatorConfig { noise_std: 1.5, ..small_cfg() };
        let scan = synthesize_scan(&basis, &axis, &cfg, 0, 7).unwrap();
        let out = apply_corruption(&scan, &CorruptionParams::zero(7)).unwrap();
        assert_eq!(out, scan);
    }

    #[test]
    fn corruption_never_touches_target() {
        let basis = MetaboliteBasis::default_synthetic();
        let axis = small_axis();
        let scan = synthesize_scan(&basis, &axis, &small_cfg(), 0, 13).unwrap();
        let params = CorruptionParams {
            amp_base: 5.0,
            amp_scan_var: 3.0,
            freq_base_hz: 4.0,
            freq_scan_var_hz: 3.0,
            phase_base_deg: 3.0,
            phase_scan_var_deg: 3.0,
            rng_seed: 13,
        };
        let out = apply_corruption(&scan, &params).unwrap();
        assert_eq!(out.target, scan.target);
        assert_ne!(out.on_transients[0].samples, scan.on_transients[0].samples);
    }

    #[test]
    fn corruption_rejects_out_of_range_levels() {
        let basis = MetaboliteBasis::default_synthetic();
        let axis = small_axis();
        let scan = synthesize_scan(&basis, &axis, &small_cfg(), 0, 1).unwrap();
        let params = CorruptionParams { freq_base_hz: 4.5, ..CorruptionParams::zero(1) };
        assert!(matches!(apply_corruption(&scan, &params), Err(Error::InvalidArg(_))));
    }

    /// Frequency of the strongest bin of a transient, from a zero-padded
    /// transform fine enough to resolve sub-Hz shifts.
    fn peak_freq_hz(fid: &ComplexFid) -> f64 {
        let pad = 8192usize;
        let spec = crate::fft::dft_descending(&fid.samples, pad).unwrap();
        let (j, _) = spec
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.norm().total_cmp(&b.1.norm()))
            .unwrap();
        let k0 = (pad - 1) / 2;
        (k0 as f64 - j as f64) * fid.sweep_width_hz() / pad as f64
    }

    #[test]
    fn frequency_corruption_jitters_peak_by_its_std() {
        // One strong resonance, no thermal noise, no jitter: the measured
        // per-transient peak frequency spread must track freq_base_hz.
        let basis = MetaboliteBasis {
            peaks: vec![BasisPeak {
                name: "probe".into(),
                center_ppm: 3.0,
                amplitude: 10.0,
                t2_seconds: 0.12,
                on_scale: 1.0,
                off_scale: 1.0,
            }],
            water_amplitude: 1.0,
            water_t2_seconds: 0.05,
        };
        let axis = PpmAxis::default_synthetic();
        let cfg = SimulatorConfig {
            n_transients: 160,
            fid_points: 1024,
            noise_std: 0.0,
            target_apodize_hz: 0.0,
            jitter: BasisJitter { amplitude_frac: 0.0, shift_ppm: 0.0, t2_frac: 0.0 },
        };
        // The single-peak basis cancels in the difference, so build the
        // scan pieces directly rather than through the full target path.
        let clean = clean_fid(&basis, &axis, cfg.fid_points, EditLabel::On).unwrap();
        let base_freq = peak_freq_hz(&clean);
        let scan = ScanRecord {
            scan_id: 0,
            on_transients: vec![clean.clone(); cfg.n_transients],
            off_transients: vec![
                ComplexFid { edit_label: Some(EditLabel::Off), ..clean.clone() };
                cfg.n_transients
            ],
            target: Spectrum::new(vec![0.0; axis.n_points], axis).unwrap(),
            corruption: CorruptionParams::zero(0),
        };
        let params = CorruptionParams { freq_base_hz: 4.0, ..CorruptionParams::zero(21) };
        let out = apply_corruption(&scan, &params).unwrap();
        let shifts: Vec<f64> = out
            .on_transients
            .iter()
            .map(|t| peak_freq_hz(t) - base_freq)
            .collect();
        let n = shifts.len() as f64;
        let mean = shifts.iter().sum::<f64>() / n;
        let var = shifts.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let std = var.sqrt();
        assert!(
            (std - 4.0).abs() / 4.0 < 0.25,
            "peak frequency std {std} Hz, expected 4 Hz within 25%"
        );
    }

    #[test]
    fn phase_corruption_rotates_first_sample_by_its_std() {
        let basis = MetaboliteBasis::default_synthetic();
        let axis = small_axis();
        let cfg = SimulatorConfig {
            n_transients: 160,
            noise_std: 0.0,
            jitter: BasisJitter { amplitude_frac: 0.0, shift_ppm: 0.0, t2_frac: 0.0 },
            ..small_cfg()
        };
        let scan = synthesize_scan(&basis, &axis, &cfg, 0, 31).unwrap();
        let params = CorruptionParams { phase_base_deg: 3.0, ..CorruptionParams::zero(31) };
        let out = apply_corruption(&scan, &params).unwrap();
        // At t = 0 the frequency term is unity, so the first sample's
        // rotation relative to the clean transient is the phase draw.
        let angles: Vec<f64> = out
            .on_transients
            .iter()
            .zip(&scan.on_transients)
            .map(|(c, o)| (c.samples[0] / o.samples[0]).arg().to_degrees())
            .collect();
        let n = angles.len() as f64;
        let mean = angles.iter().sum::<f64>() / n;
        let std =
            (angles.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        assert!(mean.abs() < 1.0, "mean rotation {mean} deg");
        assert!((std - 3.0).abs() / 3.0 < 0.25, "rotation std {std} deg");
    }

    #[test]
    fn window_counts_match_both_conventions() {
        let basis = MetaboliteBasis::default_synthetic();
        let axis = small_axis();
        let cfg = SimulatorConfig { n_transients: 160, fid_points: 64, ..small_cfg() };
        let scan = synthesize_scan(&basis, &axis, &cfg, 0, 17).unwrap();
        assert_eq!(sliding_window_samples(&scan, 40, false).unwrap().len(), 120);
        assert_eq!(sliding_window_samples(&scan, 40, true).unwrap().len(), 121);
    }

    #[test]
    fn window_at_exact_size_and_below() {
        let basis = MetaboliteBasis::default_synthetic();
        let axis = small_axis();
        let cfg = SimulatorConfig { n_transients: 40, fid_points: 64, ..small_cfg() };
        let scan = synthesize_scan(&basis, &axis, &cfg, 0, 17).unwrap();
        assert_eq!(sliding_window_samples(&scan, 40, false).unwrap().len(), 0);
        assert_eq!(sliding_window_samples(&scan, 40, true).unwrap().len(), 1);
        let short_cfg = SimulatorConfig { n_transients: 39, ..cfg };
        let short = synthesize_scan(&basis, &axis, &short_cfg, 0, 17).unwrap();
        assert!(sliding_window_samples(&short, 40, false).is_err());
    }

    #[test]
    fn windows_pair_on_and_off_at_same_offsets() {
        let basis = MetaboliteBasis::default_synthetic();
        let axis = small_axis();
        let cfg = SimulatorConfig { n_transients: 60, fid_points: 64, noise_std: 1.0, ..small_cfg() };
        let scan = synthesize_scan(&basis, &axis, &cfg, 4, 23).unwrap();
        let windows = sliding_window_samples(&scan, 40, false).unwrap();
        assert_eq!(windows.len(), 20);
        for (i, w) in windows.iter().enumerate() {
            assert_eq!(w.offset, i);
            assert_eq!(w.on_window.len(), 40);
            assert_eq!(w.off_window.len(), 40);
            assert!(std::ptr::eq(w.target, &scan.target));
            assert_eq!(w.on_window[0].samples, scan.on_transients[i].samples);
            assert_eq!(w.off_window[0].samples, scan.off_transients[i].samples);
        }
    }

    #[test]
    fn group_slices_partition_the_scan() {
        let basis = MetaboliteBasis::default_synthetic();
        let axis = small_axis();
        let cfg = SimulatorConfig { n_transients: 160, fid_points: 32, ..small_cfg() };
        let scan = synthesize_scan(&basis, &axis, &cfg, 0, 2).unwrap();
        let mut seen = 0usize;
        for g in 1..=4 {
            let (on, off) = group_slices(&scan, g).unwrap();
            assert_eq!(on.len(), 40);
            assert_eq!(off.len(), 40);
            seen += on.len();
        }
        assert_eq!(seen, 160);
        assert!(group_slices(&scan, 0).is_err());
        assert!(group_slices(&scan, 5).is_err());
    }

    #[test]
    fn averaging_snr_grows_with_sqrt_of_count() {
        // Signal averaging: peak SNR of a k-transient mean grows as
        // sqrt(k). Checked over Monte Carlo repeats for k = 10, 40, 160
        // against the k = 10 anchor.
        let basis = MetaboliteBasis::default_synthetic();
        let axis = small_axis();
        let cfg = SimulatorConfig {
            n_transients: 160,
            fid_points: 256,
            noise_std: 4.0,
            target_apodize_hz: 0.0,
            jitter: BasisJitter { amplitude_frac: 0.0, shift_ppm: 0.0, t2_frac: 0.0 },
        };
        let trials = 100;
        let mut snr = [0.0f64; 3];
        for trial in 0..trials {
            let scan = synthesize_scan(&basis, &axis, &cfg, 0, 1000 + trial).unwrap();
            for (slot, k) in [(0usize, 10usize), (1, 40), (2, 160)] {
                let mean = mean_fid(&scan.off_transients[..k]).unwrap();
                let spec = spectrum_on_axis(&mean, &axis).unwrap();
                let peak = spec.window(2.8, 3.2).unwrap().iter().cloned().fold(f64::MIN, f64::max);
                let noise = spec.window(10.0, 12.0).unwrap();
                let nm = noise.iter().sum::<f64>() / noise.len() as f64;
                let nstd = (noise.iter().map(|v| (v - nm).powi(2)).sum::<f64>()
                    / (noise.len() - 1) as f64)
                    .sqrt();
                snr[slot] += peak / nstd;
            }
        }
        let r40 = snr[1] / snr[0];
        let r160 = snr[2] / snr[0];
        assert!((r40 - 2.0).abs() / 2.0 < 0.2, "SNR(40)/SNR(10) = {r40}, want 2");
        assert!((r160 - 4.0).abs() / 4.0 < 0.2, "SNR(160)/SNR(10) = {r160}, want 4");
    }
}
