//! Reconstruction quality metrics: windowed MSE, GABA SNR, linewidth,
//! and the correlation-based shape score, plus summary error statistics.
//!
//! All metrics operate on spectra sharing one ppm axis and are invariant
//! under positive scaling of their inputs (the normalizations are part of
//! each metric's definition, not the caller's job).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::Spectrum;

/// Band edges and weights shared by the evaluation metrics.
///
/// The Glx band intentionally differs between the shape score and the
/// training loss; both forms appear here under their own names.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetricWindows {
    pub mse_lo_ppm: f64,
    pub mse_hi_ppm: f64,
    pub gaba_lo_ppm: f64,
    pub gaba_hi_ppm: f64,
    pub glx_shape_lo_ppm: f64,
    pub glx_shape_hi_ppm: f64,
    pub glx_loss_lo_ppm: f64,
    pub glx_loss_hi_ppm: f64,
    pub noise_lo_ppm: f64,
    pub noise_hi_ppm: f64,
    pub shape_weight_gaba: f64,
    pub shape_weight_glx: f64,
}

impl Default for MetricWindows {
    fn default() -> Self {
        MetricWindows {
            mse_lo_ppm: 2.5,
            mse_hi_ppm: 4.0,
            gaba_lo_ppm: 2.8,
            gaba_hi_ppm: 3.2,
            glx_shape_lo_ppm: 3.55,
            glx_shape_hi_ppm: 3.9,
            glx_loss_lo_ppm: 3.55,
            glx_loss_hi_ppm: 3.95,
            noise_lo_ppm: 10.0,
            noise_hi_ppm: 12.0,
            shape_weight_gaba: 0.6,
            shape_weight_glx: 0.4,
        }
    }
}

impl MetricWindows {
    pub fn validate(&self) -> Result<()> {
        let pairs = [
            ("mse", self.mse_lo_ppm, self.mse_hi_ppm),
            ("gaba", self.gaba_lo_ppm, self.gaba_hi_ppm),
            ("glx shape", self.glx_shape_lo_ppm, self.glx_shape_hi_ppm),
            ("glx loss", self.glx_loss_lo_ppm, self.glx_loss_hi_ppm),
            ("noise", self.noise_lo_ppm, self.noise_hi_ppm),
        ];
        for (name, lo, hi) in pairs {
            if !(lo < hi) {
                return Err(Error::InvalidArg(format!("{name} window [{lo}, {hi}] is empty")));
            }
        }
        if (self.shape_weight_gaba + self.shape_weight_glx - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidArg(format!(
                "shape weights {} + {} must sum to 1",
                self.shape_weight_gaba, self.shape_weight_glx
            )));
        }
        Ok(())
    }
}

/// Maps a slice onto [0, 1] by its own extrema.
fn min_max_normalize(values: &[f64]) -> Result<Vec<f64>> {
    let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return Err(Error::DegenerateSignal("flat window cannot be min-max normalized"));
    }
    Ok(values.iter().map(|v| (v - lo) / (hi - lo)).collect())
}

fn check_shared_axis(pred: &Spectrum, reference: &Spectrum) -> Result<()> {
    if pred.axis != reference.axis {
        return Err(Error::MetadataMismatch(
            "metric inputs must share one ppm axis".into(),
        ));
    }
    Ok(())
}

/// Mean squared error over the comparison window after independent
/// min-max normalization of each spectrum's window.
pub fn mse_windowed(pred: &Spectrum, reference: &Spectrum, w: &MetricWindows) -> Result<f64> {
    check_shared_axis(pred, reference)?;
    let p = min_max_normalize(pred.window(w.mse_lo_ppm, w.mse_hi_ppm)?)?;
    let r = min_max_normalize(reference.window(w.mse_lo_ppm, w.mse_hi_ppm)?)?;
    let n = p.len() as f64;
    Ok(p.iter().zip(&r).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / n)
}

/// Least-squares line through (x, y) pairs; returns (slope, intercept).
fn linear_fit(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
    }
    if sxx == 0.0 {
        return (0.0, my);
    }
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

fn population_std(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt()
}

/// GABA peak height over twice the noise standard deviation.
///
/// The peak height is read after subtracting the straight line through
/// the window's two edge samples, so a tilted baseline does not inflate
/// it. The noise region is detrended by a least-squares line before
/// taking its standard deviation.
pub fn snr_gaba(spec: &Spectrum, w: &MetricWindows) -> Result<f64> {
    let (gs, ge) = spec.axis.index_range(w.gaba_lo_ppm, w.gaba_hi_ppm)?;
    let v = &spec.values[gs..=ge];
    let x0 = spec.axis.ppm_at(gs);
    let x1 = spec.axis.ppm_at(ge);
    let height = v
        .iter()
        .enumerate()
        .map(|(i, &y)| {
            let x = spec.axis.ppm_at(gs + i);
            // Line through the window edges.
            let edge = v[0] + (v[v.len() - 1] - v[0]) * (x - x0) / (x1 - x0);
            y - edge
        })
        .fold(f64::NEG_INFINITY, f64::max);

    let (ns, ne) = spec.axis.index_range(w.noise_lo_ppm, w.noise_hi_ppm)?;
    let noise = &spec.values[ns..=ne];
    let xs: Vec<f64> = (ns..=ne).map(|i| spec.axis.ppm_at(i)).collect();
    let (slope, intercept) = linear_fit(&xs, noise);
    let residuals: Vec<f64> =
        noise.iter().zip(&xs).map(|(y, x)| y - (slope * x + intercept)).collect();
    let sigma = population_std(&residuals);
    if sigma == 0.0 {
        return Err(Error::DegenerateSignal("noiseless SNR undefined"));
    }
    Ok(height / (2.0 * sigma))
}

/// Full width at half maximum of the GABA peak, in ppm.
///
/// The argmax inside the GABA window anchors the peak; each half-height
/// crossing is located by walking outward (allowed to leave the window by
/// up to one window width) and linearly interpolating between the two
/// samples that straddle the half height.
pub fn fwhm_gaba(spec: &Spectrum, w: &MetricWindows) -> Result<f64> {
    let (gs, ge) = spec.axis.index_range(w.gaba_lo_ppm, w.gaba_hi_ppm)?;
    let (peak_rel, &peak_val) = spec.values[gs..=ge]
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .expect("window is nonempty");
    let peak = gs + peak_rel;
    if peak == gs || peak == ge {
        return Err(Error::UnresolvedPeak(format!(
            "maximum sits on the window edge at {:.3} ppm",
            spec.axis.ppm_at(peak)
        )));
    }
    if peak_val <= 0.0 {
        return Err(Error::UnresolvedPeak("peak maximum is not positive".into()));
    }
    let half = peak_val / 2.0;
    let width = ge - gs;
    // The crossing may fall slightly outside the window for wide peaks;
    // one extra window width on each side bounds the search.
    let lo_guard = gs.saturating_sub(width);
    let hi_guard = (ge + width).min(spec.values.len() - 1);

    // Left flank: toward smaller index, larger ppm.
    let mut left = None;
    let mut i = peak;
    while i > lo_guard {
        let (a, b) = (spec.values[i - 1], spec.values[i]);
        if a <= half && b > half {
            let frac = (half - b) / (a - b);
            left = Some(spec.axis.ppm_at(i) + frac * (spec.axis.ppm_at(i - 1) - spec.axis.ppm_at(i)));
            break;
        }
        i -= 1;
    }
    // Right flank: toward larger index, smaller ppm.
    let mut right = None;
    let mut j = peak;
    while j < hi_guard {
        let (a, b) = (spec.values[j], spec.values[j + 1]);
        if a > half && b <= half {
            let frac = (half - a) / (b - a);
            right = Some(spec.axis.ppm_at(j) + frac * (spec.axis.ppm_at(j + 1) - spec.axis.ppm_at(j)));
            break;
        }
        j += 1;
    }
    match (left, right) {
        (Some(l), Some(r)) => Ok((l - r).abs()),
        _ => Err(Error::UnresolvedPeak(format!(
            "half height of the {:.3} ppm peak is never crossed inside the guard window",
            spec.axis.ppm_at(peak)
        ))),
    }
}

fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut saa = 0.0;
    let mut sbb = 0.0;
    let mut sab = 0.0;
    for (x, y) in a.iter().zip(b) {
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
        sab += (x - ma) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::DegenerateSignal("zero variance in correlation window"));
    }
    Ok(sab / (saa * sbb).sqrt())
}

/// Weighted Pearson similarity over the GABA and Glx peak windows of
/// min-max-normalized spectra. 1 is a perfect match of both peak shapes.
pub fn shape_score(pred: &Spectrum, reference: &Spectrum, w: &MetricWindows) -> Result<f64> {
    check_shared_axis(pred, reference)?;
    let correlate = |lo: f64, hi: f64| -> Result<f64> {
        let p = min_max_normalize(pred.window(lo, hi)?)?;
        let r = min_max_normalize(reference.window(lo, hi)?)?;
        pearson(&p, &r)
    };
    let r_gaba = correlate(w.gaba_lo_ppm, w.gaba_hi_ppm)?;
    let r_glx = correlate(w.glx_shape_lo_ppm, w.glx_shape_hi_ppm)?;
    Ok(w.shape_weight_gaba * r_gaba + w.shape_weight_glx * r_glx)
}

/// Absolute-error summary of paired values against a reference.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ErrorStats {
    pub abs_error_mean: f64,
    pub abs_error_std: f64,
    /// Mean absolute percentage error.
    pub mape_percent: f64,
    /// Coefficient of variation of the values themselves, in percent.
    pub cv_percent: f64,
}

pub fn error_stats(values: &[f64], reference: &[f64]) -> Result<ErrorStats> {
    if values.len() != reference.len() {
        return Err(Error::LengthMismatch {
            context: "error statistics pairs",
            left: values.len(),
            right: reference.len(),
        });
    }
    if values.is_empty() {
        return Err(Error::EmptySignal("error statistics input"));
    }
    if let Some(r) = reference.iter().find(|r| **r == 0.0) {
        return Err(Error::InvalidArg(format!(
            "reference value {r} makes the percentage error undefined"
        )));
    }
    let abs_errors: Vec<f64> = values.iter().zip(reference).map(|(v, r)| (v - r).abs()).collect();
    let mean = abs_errors.iter().sum::<f64>() / abs_errors.len() as f64;
    let std = population_std(&abs_errors);
    let mape = 100.0
        * values
            .iter()
            .zip(reference)
            .map(|(v, r)| ((v - r) / r).abs())
            .sum::<f64>()
        / values.len() as f64;
    let vmean = values.iter().sum::<f64>() / values.len() as f64;
    let cv = if vmean == 0.0 { f64::NAN } else { 100.0 * population_std(values) / vmean.abs() };
    Ok(ErrorStats { abs_error_mean: mean, abs_error_std: std, mape_percent: mape, cv_percent: cv })
}
