//! Region-weighted mean-absolute-error loss.
//!
//! The objective is a weighted sum of three MAE terms over the predicted
//! spectrum: the full axis, the Glx band, and the GABA band, normalized by
//! the weight total. With the default 1/3/6 weights a uniform offset of
//! one produces a loss of exactly one. All arithmetic is f64 regardless
//! of the model's parameter precision.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::signal::PpmAxis;

/// Loss weights and band edges in ppm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossSpec {
    pub global_weight: f64,
    pub glx_weight: f64,
    pub gaba_weight: f64,
    pub glx_lo_ppm: f64,
    pub glx_hi_ppm: f64,
    pub gaba_lo_ppm: f64,
    pub gaba_hi_ppm: f64,
}

impl Default for LossSpec {
    fn default() -> Self {
        LossSpec {
            global_weight: 1.0,
            glx_weight: 3.0,
            gaba_weight: 6.0,
            glx_lo_ppm: 3.55,
            glx_hi_ppm: 3.95,
            gaba_lo_ppm: 2.8,
            gaba_hi_ppm: 3.2,
        }
    }
}

impl LossSpec {
    /// Binds the ppm band edges to concrete index ranges on an axis.
    pub fn resolve(&self, axis: &PpmAxis) -> Result<ResolvedLoss> {
        let glx = axis.index_range(self.glx_lo_ppm, self.glx_hi_ppm)?;
        let gaba = axis.index_range(self.gaba_lo_ppm, self.gaba_hi_ppm)?;
        Ok(ResolvedLoss {
            w_global: self.global_weight,
            w_glx: self.glx_weight,
            w_gaba: self.gaba_weight,
            w_sum: self.global_weight + self.glx_weight + self.gaba_weight,
            glx,
            gaba,
            n_points: axis.n_points,
        })
    }
}

/// Loss with band edges fixed to axis indices (inclusive ranges).
#[derive(Debug, Clone, Copy)]
pub struct ResolvedLoss {
    pub w_global: f64,
    pub w_glx: f64,
    pub w_gaba: f64,
    pub w_sum: f64,
    pub glx: (usize, usize),
    pub gaba: (usize, usize),
    pub n_points: usize,
}

fn mae(pred: &[f64], target: &[f64], range: (usize, usize)) -> f64 {
    let (lo, hi) = range;
    let mut acc = 0.0;
    for i in lo..=hi {
        acc += (pred[i] - target[i]).abs();
    }
    acc / (hi - lo + 1) as f64
}

impl ResolvedLoss {
    pub fn loss(&self, pred: &[f64], target: &[f64]) -> f64 {
        debug_assert_eq!(pred.len(), self.n_points);
        debug_assert_eq!(target.len(), self.n_points);
        let global = mae(pred, target, (0, self.n_points - 1));
        let glx = mae(pred, target, self.glx);
        let gaba = mae(pred, target, self.gaba);
        (self.w_global * global + self.w_glx * glx + self.w_gaba * gaba) / self.w_sum
    }

    /// Loss together with its (sub)gradient with respect to the
    /// prediction, accumulated into `grad`. The derivative of |x| at zero
    /// is taken as zero, so a perfect prediction has a zero gradient.
    pub fn loss_and_grad(&self, pred: &[f64], target: &[f64], grad: &mut [f64]) -> f64 {
        debug_assert_eq!(grad.len(), self.n_points);
        let n = self.n_points as f64;
        let glx_len = (self.glx.1 - self.glx.0 + 1) as f64;
        let gaba_len = (self.gaba.1 - self.gaba.0 + 1) as f64;
        for i in 0..self.n_points {
            let mut w = self.w_global / n;
            if i >= self.glx.0 && i <= self.glx.1 {
                w += self.w_glx / glx_len;
            }
            if i >= self.gaba.0 && i <= self.gaba.1 {
                w += self.w_gaba / gaba_len;
            }
            let d = pred[i] - target[i];
            let sign = if d > 0.0 {
                1.0
            } else if d < 0.0 {
                -1.0
            } else {
                0.0
            };
            grad[i] += w * sign / self.w_sum;
        }
        self.loss(pred, target)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn resolved() -> ResolvedLoss {
        let axis = PpmAxis::default_synthetic();
        LossSpec::default().resolve(&axis).unwrap()
    }

    #[test]
    fn perfect_prediction_has_zero_loss_and_gradient() {
        let r = resolved();
        let mut rng = Rng::new(3);
        let y: Vec<f64> = (0..r.n_points).map(|_| rng.normal()).collect();
        assert_eq!(r.loss(&y, &y), 0.0);
        let mut grad = vec![0.0; r.n_points];
        let loss = r.loss_and_grad(&y, &y, &mut grad);
        assert_eq!(loss, 0.0);
        assert!(grad.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn unit_offset_scores_exactly_one() {
        let r = resolved();
        let mut rng = Rng::new(4);
        let y: Vec<f64> = (0..r.n_points).map(|_| rng.normal()).collect();
        let shifted: Vec<f64> = y.iter().map(|v| v + 1.0).collect();
        // Every MAE term equals 1, and the weights are normalized.
        assert!((r.loss(&shifted, &y) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let r = resolved();
        let mut rng = Rng::new(5);
        let target: Vec<f64> = (0..r.n_points).map(|_| rng.normal()).collect();
        let pred: Vec<f64> = (0..r.n_points).map(|_| rng.normal()).collect();
        let mut grad = vec![0.0; r.n_points];
        r.loss_and_grad(&pred, &target, &mut grad);
        // Probe a few indices inside and outside the weighted bands.
        for &i in &[0usize, 100, r.gaba.0, r.gaba.1, r.glx.0 + 3, r.n_points - 1] {
            let h = 1e-7;
            let mut plus = pred.clone();
            plus[i] += h;
            let mut minus = pred.clone();
            minus[i] -= h;
            let fd = (r.loss(&plus, &target) - r.loss(&minus, &target)) / (2.0 * h);
            assert!(
                (fd - grad[i]).abs() < 1e-6,
                "index {i}: analytic {} vs finite-difference {fd}",
                grad[i]
            );
        }
    }

    #[test]
    fn gaba_band_perturbation_scales_linearly() {
        let r = resolved();
        let axis = PpmAxis::default_synthetic();
        let target = vec![0.0; r.n_points];
        let center = axis.nearest_index(3.0);
        let mut losses = Vec::new();
        for k in 1..=5 {
            let amp = k as f64 * 0.1;
            let mut pred = target.clone();
            // Bump a few bins around the GABA peak position.
            for i in center.saturating_sub(3)..=center + 3 {
                pred[i] += amp;
            }
            losses.push((amp, r.loss(&pred, &target)));
        }
        // Pure scaling of a fixed perturbation must scale the loss by the
        // same factor (MAE is positively homogeneous).
        let (a0, l0) = losses[0];
        for &(a, l) in &losses[1..] {
            assert!((l / l0 - a / a0).abs() < 1e-12);
        }
    }
}
