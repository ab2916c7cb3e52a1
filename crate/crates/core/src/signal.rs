//! Core signal types: complex FIDs, the chemical-shift axis, and real
//! spectra, plus the resampling and averaging operations that connect them.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::fft::dft_descending;

/// Which editing condition a transient was acquired under.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EditLabel {
    /// Editing pulse applied.
    On,
    /// Editing pulse absent.
    Off,
}

/// A complex time-domain free induction decay with its acquisition
/// metadata.
///
/// `edit_label` is `None` for derived signals (difference FIDs, water
/// references) that belong to neither editing condition.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexFid {
    pub samples: Vec<Complex64>,
    /// Sampling interval in seconds; sweep width is its reciprocal.
    pub dwell_time: f64,
    /// Transmitter (scanner reference) frequency in Hz.
    pub transmitter_hz: f64,
    pub edit_label: Option<EditLabel>,
}

impl ComplexFid {
    pub fn new(
        samples: Vec<Complex64>,
        dwell_time: f64,
        transmitter_hz: f64,
        edit_label: Option<EditLabel>,
    ) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::EmptySignal("FID samples"));
        }
        if !(dwell_time > 0.0) || !dwell_time.is_finite() {
            return Err(Error::InvalidArg(format!(
                "dwell_time must be positive and finite, got {dwell_time}"
            )));
        }
        if !(transmitter_hz > 0.0) || !transmitter_hz.is_finite() {
            return Err(Error::InvalidArg(format!(
                "transmitter_hz must be positive and finite, got {transmitter_hz}"
            )));
        }
        Ok(ComplexFid { samples, dwell_time, transmitter_hz, edit_label })
    }

    /// Spectral bandwidth in Hz.
    pub fn sweep_width_hz(&self) -> f64 {
        1.0 / self.dwell_time
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Uniform chemical-shift axis, descending in ppm as index grows.
///
/// Point `i` sits at `center_ppm + (sw/2 - i*sw/(n-1)) / (tx * 1e-6)`:
/// the full sweep width is spread over `n_points` with the transmitter
/// frequency at the centre of the axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PpmAxis {
    pub n_points: usize,
    pub center_ppm: f64,
    pub sweep_width_hz: f64,
    pub transmitter_hz: f64,
}

impl Default for PpmAxis {
    fn default() -> Self {
        Self::default_synthetic()
    }
}

impl PpmAxis {
    pub fn new(
        n_points: usize,
        center_ppm: f64,
        sweep_width_hz: f64,
        transmitter_hz: f64,
    ) -> Result<Self> {
        if n_points < 2 {
            return Err(Error::InvalidArg(format!(
                "axis needs at least 2 points, got {n_points}"
            )));
        }
        if !(sweep_width_hz > 0.0) || !sweep_width_hz.is_finite() {
            return Err(Error::InvalidArg(format!(
                "sweep_width_hz must be positive and finite, got {sweep_width_hz}"
            )));
        }
        if !(transmitter_hz > 0.0) || !transmitter_hz.is_finite() {
            return Err(Error::InvalidArg(format!(
                "transmitter_hz must be positive and finite, got {transmitter_hz}"
            )));
        }
        if !center_ppm.is_finite() {
            return Err(Error::InvalidArg("center_ppm must be finite".into()));
        }
        Ok(PpmAxis { n_points, center_ppm, sweep_width_hz, transmitter_hz })
    }

    /// Axis for the standard synthetic acquisition: 2048 points over a
    /// 2 kHz sweep at a 127.7 MHz transmitter, water-centred at 4.7 ppm.
    pub fn default_synthetic() -> Self {
        PpmAxis {
            n_points: 2048,
            center_ppm: 4.7,
            sweep_width_hz: 2000.0,
            transmitter_hz: 127.7e6,
        }
    }

    /// Chemical shift at index `i`.
    pub fn ppm_at(&self, i: usize) -> f64 {
        let step_hz = self.sweep_width_hz / (self.n_points - 1) as f64;
        let offset_hz = self.sweep_width_hz / 2.0 - i as f64 * step_hz;
        self.center_ppm + offset_hz / (self.transmitter_hz * 1e-6)
    }

    /// All axis values, descending.
    pub fn values(&self) -> Vec<f64> {
        (0..self.n_points).map(|i| self.ppm_at(i)).collect()
    }

    /// Spacing between adjacent points, in ppm (positive).
    pub fn step_ppm(&self) -> f64 {
        (self.sweep_width_hz / (self.n_points - 1) as f64) / (self.transmitter_hz * 1e-6)
    }

    /// Index whose chemical shift is closest to `ppm`.
    pub fn nearest_index(&self, ppm: f64) -> usize {
        let step_hz = self.sweep_width_hz / (self.n_points - 1) as f64;
        let offset_hz = (ppm - self.center_ppm) * self.transmitter_hz * 1e-6;
        let i = (self.sweep_width_hz / 2.0 - offset_hz) / step_hz;
        i.round().clamp(0.0, (self.n_points - 1) as f64) as usize
    }

    /// Inclusive index range covering `lo_ppm <= ppm <= hi_ppm`.
    ///
    /// Indices ascend while ppm descends, so the range starts at the
    /// high-ppm edge. Errors if the window misses the axis entirely.
    pub fn index_range(&self, lo_ppm: f64, hi_ppm: f64) -> Result<(usize, usize)> {
        if !(lo_ppm < hi_ppm) {
            return Err(Error::InvalidArg(format!(
                "window bounds must satisfy lo < hi, got [{lo_ppm}, {hi_ppm}]"
            )));
        }
        let n = self.n_points;
        let mut start = None;
        let mut end = None;
        for i in 0..n {
            let p = self.ppm_at(i);
            if p <= hi_ppm && start.is_none() {
                start = Some(i);
            }
            if p >= lo_ppm {
                end = Some(i);
            }
        }
        match (start, end) {
            (Some(s), Some(e)) if s <= e => Ok((s, e)),
            _ => Err(Error::EmptyWindow { lo_ppm, hi_ppm }),
        }
    }
}

/// A real-valued spectrum on a ppm axis.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    pub values: Vec<f64>,
    pub axis: PpmAxis,
}

impl Spectrum {
    pub fn new(values: Vec<f64>, axis: PpmAxis) -> Result<Self> {
        if values.len() != axis.n_points {
            return Err(Error::LengthMismatch {
                context: "spectrum values vs axis points",
                left: values.len(),
                right: axis.n_points,
            });
        }
        Ok(Spectrum { values, axis })
    }

    /// Values restricted to the inclusive window `[lo_ppm, hi_ppm]`.
    pub fn window(&self, lo_ppm: f64, hi_ppm: f64) -> Result<&[f64]> {
        let (s, e) = self.axis.index_range(lo_ppm, hi_ppm)?;
        Ok(&self.values[s..=e])
    }
}

/// Transforms a FID to a real spectrum on the given axis.
///
/// The descending-frequency DFT is evaluated at the axis length and the
/// real part is kept. The FID's sweep width and transmitter frequency must
/// match the axis, otherwise peak positions would be silently wrong.
pub fn fid_to_spectrum(fid: &ComplexFid, axis: &PpmAxis) -> Result<Spectrum> {
    let rel = |a: f64, b: f64| (a - b).abs() / b.abs().max(1e-300);
    if rel(fid.sweep_width_hz(), axis.sweep_width_hz) > 1e-9 {
        return Err(Error::MetadataMismatch(format!(
            "FID sweep width {} Hz vs axis {} Hz",
            fid.sweep_width_hz(),
            axis.sweep_width_hz
        )));
    }
    if rel(fid.transmitter_hz, axis.transmitter_hz) > 1e-9 {
        return Err(Error::MetadataMismatch(format!(
            "FID transmitter {} Hz vs axis {} Hz",
            fid.transmitter_hz, axis.transmitter_hz
        )));
    }
    let spec = dft_descending(&fid.samples, axis.n_points)?;
    Spectrum::new(spec.iter().map(|v| v.re).collect(), *axis)
}

/// Descending-frequency complex DFT of a FID at an explicit length.
pub fn fid_dft(fid: &ComplexFid, fft_length: usize) -> Result<Vec<Complex64>> {
    dft_descending(&fid.samples, fft_length)
}

/// Nearest-neighbour downsampling to `target_points`.
///
/// Output point `j` copies input index `round(j * (n_in - 1) / (n_out - 1))`
/// with ties rounded to even, so both endpoints are always preserved.
pub fn downsample_nearest(values: &[f64], target_points: usize) -> Result<Vec<f64>> {
    let n_in = values.len();
    if n_in == 0 {
        return Err(Error::EmptySignal("downsample input"));
    }
    if target_points < 2 {
        return Err(Error::InvalidArg(format!(
            "downsample target must be at least 2, got {target_points}"
        )));
    }
    if target_points > n_in {
        return Err(Error::InvalidArg(format!(
            "downsample target {target_points} exceeds input length {n_in}"
        )));
    }
    let scale = (n_in - 1) as f64 / (target_points - 1) as f64;
    Ok((0..target_points)
        .map(|j| values[(j as f64 * scale).round_ties_even() as usize])
        .collect())
}

/// Scales values so the maximum absolute value is exactly 1, returning the
/// scaled values and the divisor that was applied.
pub fn normalize_max_abs(values: &[f64]) -> Result<(Vec<f64>, f64)> {
    if values.is_empty() {
        return Err(Error::EmptySignal("normalization input"));
    }
    let max_abs = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if max_abs == 0.0 {
        return Err(Error::DegenerateSignal("normalization divisor"));
    }
    Ok((values.iter().map(|v| v / max_abs).collect(), max_abs))
}

fn check_combinable(a: &ComplexFid, b: &ComplexFid, context: &str) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            context: "FID lengths",
            left: a.len(),
            right: b.len(),
        });
    }
    if a.dwell_time != b.dwell_time || a.transmitter_hz != b.transmitter_hz {
        return Err(Error::MetadataMismatch(format!(
            "{context}: dwell {} vs {}, transmitter {} vs {}",
            a.dwell_time, b.dwell_time, a.transmitter_hz, b.transmitter_hz
        )));
    }
    Ok(())
}

/// Sample-wise mean of transients sharing metadata and edit label.
pub fn mean_fid(transients: &[ComplexFid]) -> Result<ComplexFid> {
    let first = transients.first().ok_or(Error::EmptySignal("mean of no transients"))?;
    let mut acc = vec![Complex64::new(0.0, 0.0); first.len()];
    for t in transients {
        check_combinable(first, t, "transient average")?;
        if t.edit_label != first.edit_label {
            return Err(Error::MetadataMismatch(
                "cannot average transients with different edit labels".into(),
            ));
        }
        for (a, s) in acc.iter_mut().zip(&t.samples) {
            *a += s;
        }
    }
    let scale = 1.0 / transients.len() as f64;
    for a in acc.iter_mut() {
        *a *= scale;
    }
    ComplexFid::new(acc, first.dwell_time, first.transmitter_hz, first.edit_label)
}

/// Difference FID: OFF mean minus ON mean, sample-wise.
///
/// The subtraction direction keeps the edited resonances positive in the
/// resulting difference spectrum.
pub fn difference_fid(mean_on: &ComplexFid, mean_off: &ComplexFid) -> Result<ComplexFid> {
    check_combinable(mean_on, mean_off, "edited difference")?;
    if mean_on.edit_label != Some(EditLabel::On) || mean_off.edit_label != Some(EditLabel::Off) {
        return Err(Error::MetadataMismatch(format!(
            "difference needs an ON and an OFF mean, got {:?} and {:?}",
            mean_on.edit_label, mean_off.edit_label
        )));
    }
    let samples = mean_off
        .samples
        .iter()
        .zip(&mean_on.samples)
        .map(|(off, on)| off - on)
        .collect();
    ComplexFid::new(samples, mean_on.dwell_time, mean_on.transmitter_hz, None)
}

/// Exponential line broadening: sample `i` is scaled by
/// `exp(-pi * lb_hz * i * dwell)`, which adds `lb_hz` to every Lorentzian
/// line width.
pub fn apodize(fid: &ComplexFid, lb_hz: f64) -> ComplexFid {
    let samples = fid
        .samples
        .iter()
        .enumerate()
        .map(|(i, s)| s * (-PI * lb_hz * i as f64 * fid.dwell_time).exp())
        .collect();
    ComplexFid {
        samples,
        dwell_time: fid.dwell_time,
        transmitter_hz: fid.transmitter_hz,
        edit_label: fid.edit_label,
    }
}
