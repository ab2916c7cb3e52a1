//! Peak fitting and quantification: Levenberg-Marquardt least squares of
//! Gaussian or Lorentzian peak groups over a linear baseline, the
//! quadrature fit-error figure, and metabolite area ratios.
//!
//! The shapes are a deliberate simplification (single Gaussian for GABA+
//! and creatine, a Gaussian doublet for Glx, a Lorentzian for water); every
//! reconstruction under comparison is scored by the same fitter, so the
//! ratios are internally consistent even though they are not comparable to
//! other software's absolute values.

use serde::Serialize;
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::signal::{ComplexFid, Spectrum};
use crate::simulator::spectrum_on_axis;

/// Relative cost change below which the optimizer stops.
const LM_REL_TOL: f64 = 1e-10;
/// Iteration budget; exhausting it stops the fit with the best parameters
/// reached, the same stopping convention as common fitting toolboxes.
const LM_MAX_ITERATIONS: usize = 200;
const LM_LAMBDA_INIT: f64 = 1e-3;
/// Damping beyond which repeated step failures abort the fit: at this
/// level the step is a vanishing gradient descent move, so no admissible
/// step exists.
const LM_LAMBDA_MAX: f64 = 1e15;
/// Floor for the damped diagonal, guarding parameters the window does not
/// constrain at all.
const LM_DIAG_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum PeakShape {
    Gaussian,
    TwoGaussian,
    Lorentzian,
}

impl PeakShape {
    pub fn n_peaks(self) -> usize {
        match self {
            PeakShape::TwoGaussian => 2,
            _ => 1,
        }
    }

    /// Packed parameter count: (center, height, log-width) per peak plus
    /// baseline slope and offset.
    pub fn n_params(self) -> usize {
        3 * self.n_peaks() + 2
    }

    /// Model value at `x` with the Jacobian row written into `jac`.
    ///
    /// Widths live as logarithms in the parameter vector, so every
    /// optimizer step keeps them positive by construction.
    fn value_and_jacobian(self, p: &[f64], x: f64, jac: &mut [f64]) -> f64 {
        let n = self.n_peaks();
        let slope = p[3 * n];
        let offset = p[3 * n + 1];
        let mut value = slope * x + offset;
        jac[3 * n] = x;
        jac[3 * n + 1] = 1.0;
        for k in 0..n {
            let (center, height, u) = (p[3 * k], p[3 * k + 1], p[3 * k + 2]);
            let width = u.exp();
            let d = x - center;
            match self {
                PeakShape::Gaussian | PeakShape::TwoGaussian => {
                    let g = (-d * d / (2.0 * width * width)).exp();
                    value += height * g;
                    jac[3 * k] = height * g * d / (width * width);
                    jac[3 * k + 1] = g;
                    jac[3 * k + 2] = height * g * d * d / (width * width);
                }
                PeakShape::Lorentzian => {
                    let denom = d * d + width * width;
                    let l = width * width / denom;
                    value += height * l;
                    jac[3 * k] = height * l * 2.0 * d / denom;
                    jac[3 * k + 1] = l;
                    jac[3 * k + 2] = height * l * 2.0 * d * d / denom;
                }
            }
        }
        value
    }
}

/// Where and what to fit.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct PeakLayout {
    pub label: &'static str,
    pub lo_ppm: f64,
    pub hi_ppm: f64,
    pub shape: PeakShape,
}

impl PeakLayout {
    /// GABA+ on the difference spectrum.
    pub fn gaba() -> Self {
        PeakLayout { label: "gaba", lo_ppm: 2.8, hi_ppm: 3.2, shape: PeakShape::Gaussian }
    }

    /// Glx doublet on the difference spectrum.
    pub fn glx() -> Self {
        PeakLayout { label: "glx", lo_ppm: 3.55, hi_ppm: 3.95, shape: PeakShape::TwoGaussian }
    }

    /// Creatine on the edit-OFF spectrum.
    pub fn creatine() -> Self {
        PeakLayout { label: "creatine", lo_ppm: 2.8, hi_ppm: 3.2, shape: PeakShape::Gaussian }
    }

    /// Unsuppressed water on the reference spectrum.
    pub fn water() -> Self {
        PeakLayout { label: "water", lo_ppm: 4.4, hi_ppm: 5.0, shape: PeakShape::Lorentzian }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FittedPeak {
    pub center_ppm: f64,
    pub height: f64,
    /// Gaussian sigma, or Lorentzian half width at half maximum, in ppm.
    pub width_ppm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PeakFit {
    pub shape: PeakShape,
    pub peaks: Vec<FittedPeak>,
    pub baseline_slope: f64,
    pub baseline_offset: f64,
    /// Standard deviation of the data minus the full fitted model.
    pub residual_std: f64,
    /// Largest baseline-free model magnitude over the fit window.
    pub model_amplitude: f64,
    pub iterations: usize,
    pub cost: f64,
}

impl PeakFit {
    /// A fit whose model never rises above its own baseline carries no
    /// peak information.
    pub fn is_degenerate(&self) -> bool {
        self.model_amplitude == 0.0
    }

    /// Residual noise as a percentage of the model amplitude.
    pub fn relative_error_percent(&self) -> Result<f64> {
        if self.model_amplitude == 0.0 {
            return Err(Error::DegenerateSignal("zero-amplitude fit has no defined error"));
        }
        Ok(100.0 * self.residual_std / self.model_amplitude)
    }

    /// Total analytic peak area: height·sigma·sqrt(2*pi) per Gaussian,
    /// height·hwhm·pi for the Lorentzian.
    pub fn area(&self) -> f64 {
        let per_peak: f64 = match self.shape {
            PeakShape::Gaussian | PeakShape::TwoGaussian => (2.0 * PI).sqrt(),
            PeakShape::Lorentzian => PI,
        };
        self.peaks.iter().map(|p| p.height * p.width_ppm * per_peak).sum()
    }
}

/// Solves `a x = b` in place by Gaussian elimination with partial
/// pivoting; `a` is row-major n-by-n. Returns false on a singular system.
fn solve_in_place(a: &mut [f64], b: &mut [f64], n: usize) -> bool {
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| a[i * n + col].abs().total_cmp(&a[j * n + col].abs()))
            .expect("nonempty pivot range");
        if a[pivot * n + col].abs() < 1e-300 {
            return false;
        }
        if pivot != col {
            for k in 0..n {
                a.swap(col * n + k, pivot * n + k);
            }
            b.swap(col, pivot);
        }
        for row in col + 1..n {
            let f = a[row * n + col] / a[col * n + col];
            if f == 0.0 {
                continue;
            }
            for k in col..n {
                a[row * n + k] -= f * a[col * n + k];
            }
            b[row] -= f * b[col];
        }
    }
    for col in (0..n).rev() {
        let mut s = b[col];
        for k in col + 1..n {
            s -= a[col * n + k] * b[k];
        }
        b[col] = s / a[col * n + col];
    }
    true
}

struct Objective<'a> {
    shape: PeakShape,
    xs: &'a [f64],
    ys: &'a [f64],
}

impl Objective<'_> {
    fn cost(&self, p: &[f64]) -> f64 {
        let mut jac = vec![0.0; p.len()];
        self.xs
            .iter()
            .zip(self.ys)
            .map(|(&x, &y)| {
                let r = y - self.shape.value_and_jacobian(p, x, &mut jac);
                r * r
            })
            .sum()
    }

    /// Accumulates JtJ and Jt·residual at `p`; returns the cost.
    fn normal_equations(&self, p: &[f64], jtj: &mut [f64], jtr: &mut [f64]) -> f64 {
        let n = p.len();
        jtj.fill(0.0);
        jtr.fill(0.0);
        let mut jac = vec![0.0; n];
        let mut cost = 0.0;
        for (&x, &y) in self.xs.iter().zip(self.ys) {
            let r = y - self.shape.value_and_jacobian(p, x, &mut jac);
            cost += r * r;
            for i in 0..n {
                jtr[i] += jac[i] * r;
                for j in i..n {
                    jtj[i * n + j] += jac[i] * jac[j];
                }
            }
        }
        for i in 0..n {
            for j in 0..i {
                jtj[i * n + j] = jtj[j * n + i];
            }
        }
        cost
    }
}

fn levenberg_marquardt(
    label: &str,
    obj: &Objective,
    mut p: Vec<f64>,
) -> Result<(Vec<f64>, f64, usize)> {
    let n = p.len();
    let mut jtj = vec![0.0; n * n];
    let mut jtr = vec![0.0; n];
    let mut cost = obj.normal_equations(&p, &mut jtj, &mut jtr);
    if !cost.is_finite() {
        return Err(Error::NonConvergence {
            context: format!("{label} fit starts from non-finite cost"),
            iterations: 0,
        });
    }
    let mut lambda = LM_LAMBDA_INIT;
    for iteration in 1..=LM_MAX_ITERATIONS {
        let mut a = jtj.clone();
        let mut delta = jtr.clone();
        for i in 0..n {
            a[i * n + i] += lambda * jtj[i * n + i].max(LM_DIAG_FLOOR);
        }
        let mut step_failed = !solve_in_place(&mut a, &mut delta, n);
        let mut trial = Vec::new();
        let mut trial_cost = f64::INFINITY;
        if !step_failed {
            trial = p.iter().zip(&delta).map(|(v, d)| v + d).collect();
            trial_cost = obj.cost(&trial);
            step_failed = !trial_cost.is_finite();
        }
        if step_failed {
            lambda *= 10.0;
            if lambda > LM_LAMBDA_MAX {
                return Err(Error::NonConvergence {
                    context: format!("{label} fit cannot take a step from cost {cost:.6e}"),
                    iterations: iteration,
                });
            }
            continue;
        }
        let rel_change = (cost - trial_cost) / cost.max(1e-300);
        if trial_cost <= cost {
            p = trial;
            let converged = rel_change < LM_REL_TOL;
            cost = obj.normal_equations(&p, &mut jtj, &mut jtr);
            lambda = (lambda * 0.1).max(1e-12);
            if converged {
                return Ok((p, cost, iteration));
            }
        } else if -rel_change < LM_REL_TOL {
            // The best admissible step changes nothing: a minimum.
            return Ok((p, cost, iteration));
        } else {
            lambda *= 10.0;
            if lambda > LM_LAMBDA_MAX {
                // Damping this strong means even a near-zero step worsens
                // the cost; accept the current point as the minimum.
                return Ok((p, cost, iteration));
            }
        }
    }
    // Spending the whole budget is a stopping rule, not a failure; the fit
    // keeps the best parameters found.
    Ok((p, cost, LM_MAX_ITERATIONS))
}

/// Starting point: baseline through the window's edge samples, peak
/// heights and centers from the detrended maximum, widths from the
/// detrended half-maximum span when it is resolvable.
fn initial_guess(layout: &PeakLayout, xs: &[f64], ys: &[f64]) -> Vec<f64> {
    let m = xs.len();
    let slope = (ys[m - 1] - ys[0]) / (xs[m - 1] - xs[0]);
    let offset = ys[0] - slope * xs[0];
    let detrended: Vec<f64> = ys.iter().zip(xs).map(|(y, x)| y - (slope * x + offset)).collect();
    let (peak, &peak_val) =
        detrended.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).expect("nonempty window");
    let window_width = (xs[0] - xs[m - 1]).abs();

    // Half-maximum span of the detrended data, if both flanks cross it.
    let half = peak_val / 2.0;
    let left = (0..peak).rev().find(|&i| detrended[i] <= half);
    let right = (peak + 1..m).find(|&i| detrended[i] <= half);
    let sigma = match (left, right) {
        (Some(l), Some(r)) if peak_val > 0.0 => ((xs[l] - xs[r]).abs() / 2.3548)
            .max(window_width / (m as f64))
            .min(window_width),
        _ => window_width / 6.0,
    };

    match layout.shape {
        PeakShape::Gaussian | PeakShape::Lorentzian => {
            vec![xs[peak], peak_val, sigma.ln(), slope, offset]
        }
        PeakShape::TwoGaussian => {
            let lo = layout.lo_ppm;
            let w = layout.hi_ppm - layout.lo_ppm;
            let s = (w / 10.0).ln();
            vec![
                lo + 0.3 * w,
                0.8 * peak_val,
                s,
                lo + 0.7 * w,
                0.8 * peak_val,
                s,
                slope,
                offset,
            ]
        }
    }
}

/// Least-squares fit of `layout` to the spectrum's window.
pub fn fit_peaks(spec: &Spectrum, layout: &PeakLayout) -> Result<PeakFit> {
    let (start, end) = spec.axis.index_range(layout.lo_ppm, layout.hi_ppm)?;
    let xs: Vec<f64> = (start..=end).map(|i| spec.axis.ppm_at(i)).collect();
    let ys = &spec.values[start..=end];
    let n = layout.shape.n_params();
    if xs.len() < n {
        return Err(Error::InvalidArg(format!(
            "{} window holds {} points, fewer than the {} fit parameters",
            layout.label,
            xs.len(),
            n
        )));
    }
    let obj = Objective { shape: layout.shape, xs: &xs, ys };
    let p0 = initial_guess(layout, &xs, ys);
    let (p, cost, iterations) = levenberg_marquardt(layout.label, &obj, p0)?;

    let n_peaks = layout.shape.n_peaks();
    let mut peaks: Vec<FittedPeak> = (0..n_peaks)
        .map(|k| FittedPeak {
            center_ppm: p[3 * k],
            height: p[3 * k + 1],
            width_ppm: p[3 * k + 2].exp(),
        })
        .collect();
    peaks.sort_by(|a, b| a.center_ppm.total_cmp(&b.center_ppm));
    let slope = p[3 * n_peaks];
    let offset = p[3 * n_peaks + 1];

    let mut jac = vec![0.0; p.len()];
    let mut residuals = Vec::with_capacity(xs.len());
    let mut amplitude = 0.0f64;
    for (&x, &y) in xs.iter().zip(ys) {
        let model = layout.shape.value_and_jacobian(&p, x, &mut jac);
        residuals.push(y - model);
        amplitude = amplitude.max((model - (slope * x + offset)).abs());
    }
    let mean = residuals.iter().sum::<f64>() / residuals.len() as f64;
    let residual_std = (residuals.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>()
        / residuals.len() as f64)
        .sqrt();

    Ok(PeakFit {
        shape: layout.shape,
        peaks,
        baseline_slope: slope,
        baseline_offset: offset,
        residual_std,
        model_amplitude: amplitude,
        iterations,
        cost,
    })
}

/// Quadrature combination of the metabolite and reference fit errors,
/// each being residual noise as a percentage of model amplitude.
pub fn fit_error(fit: &PeakFit, reference: &PeakFit) -> Result<f64> {
    let e_met = fit.relative_error_percent()?;
    let e_ref = reference.relative_error_percent()?;
    Ok((e_met * e_met + e_ref * e_ref).sqrt())
}

/// Metabolite ratios with per-ratio quadrature fit errors.
///
/// No relaxation, tissue, or editing-efficiency corrections are applied:
/// the ratios are raw fitted-area quotients and only comparable between
/// reconstructions scored by this same fitter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct QuantResult {
    pub gaba_water: f64,
    pub gaba_cr: f64,
    pub glx_water: f64,
    pub gaba_water_error_percent: f64,
    pub gaba_cr_error_percent: f64,
    pub glx_water_error_percent: f64,
}

fn positive_area(fit: &PeakFit, label: &str) -> Result<f64> {
    let area = fit.area();
    if !(area > 0.0) {
        return Err(Error::UnresolvedPeak(format!("{label} fit has non-positive area {area}")));
    }
    Ok(area)
}

/// Fits GABA+ and Glx on the difference spectrum, creatine on the OFF
/// spectrum, and water on the reference FID's spectrum, and returns the
/// area ratios.
pub fn quantify(diff: &Spectrum, off: &Spectrum, water_fid: &ComplexFid) -> Result<QuantResult> {
    if diff.axis != off.axis {
        return Err(Error::MetadataMismatch(
            "difference and OFF spectra must share one axis".into(),
        ));
    }
    if water_fid.samples.iter().all(|z| z.norm_sqr() == 0.0) {
        return Err(Error::DegenerateSignal("water reference FID is identically zero"));
    }
    let gaba = fit_peaks(diff, &PeakLayout::gaba())?;
    let glx = fit_peaks(diff, &PeakLayout::glx())?;
    let cr = fit_peaks(off, &PeakLayout::creatine())?;
    let water_spec = spectrum_on_axis(water_fid, &diff.axis)?;
    let water = fit_peaks(&water_spec, &PeakLayout::water())?;

    let gaba_area = positive_area(&gaba, "gaba")?;
    let glx_area = positive_area(&glx, "glx")?;
    let cr_area = positive_area(&cr, "creatine")?;
    let water_area = positive_area(&water, "water")?;

    Ok(QuantResult {
        gaba_water: gaba_area / water_area,
        gaba_cr: gaba_area / cr_area,
        glx_water: glx_area / water_area,
        gaba_water_error_percent: fit_error(&gaba, &water)?,
        gaba_cr_error_percent: fit_error(&gaba, &cr)?,
        glx_water_error_percent: fit_error(&glx, &water)?,
    })
}
