//! Discrete Fourier transforms implemented in-repo.
//!
//! Power-of-two lengths use an iterative radix-2 transform; every other
//! length goes through Bluestein's chirp-z reformulation, which reduces an
//! arbitrary-length DFT to a power-of-two cyclic convolution. Keeping the
//! transform in-repo pins the exact floating-point behaviour that the
//! dataset format and the reproducibility guarantees depend on.

use num_complex::Complex64;
use std::f64::consts::PI;

use crate::error::{Error, Result};

/// In-place radix-2 transform. `data.len()` must be a power of two.
///
/// `inverse` applies the conjugate transform including the 1/N scale, so
/// `fft_pow2(fft_pow2(x, false), true) == x` up to roundoff.
pub fn fft_pow2(data: &mut [Complex64], inverse: bool) {
    let n = data.len();
    debug_assert!(n.is_power_of_two());
    if n <= 1 {
        return;
    }

    // Bit-reversal permutation.
    let mut j = 0usize;
    for i in 0..n - 1 {
        if i < j {
            data.swap(i, j);
        }
        let mut mask = n >> 1;
        while j & mask != 0 {
            j ^= mask;
            mask >>= 1;
        }
        j |= mask;
    }

    let sign = if inverse { 1.0 } else { -1.0 };
    let mut len = 2;
    while len <= n {
        let ang = sign * std::f64::consts::TAU / len as f64;
        let w_len = Complex64::from_polar(1.0, ang);
        for start in (0..n).step_by(len) {
            let mut w = Complex64::new(1.0, 0.0);
            for k in 0..len / 2 {
                let a = data[start + k];
                let b = data[start + k + len / 2] * w;
                data[start + k] = a + b;
                data[start + k + len / 2] = a - b;
                w *= w_len;
            }
        }
        len <<= 1;
    }

    if inverse {
        let scale = 1.0 / n as f64;
        for v in data.iter_mut() {
            *v *= scale;
        }
    }
}

/// Reusable transform plan for one length.
///
/// Power-of-two lengths transform directly; other lengths carry the
/// precomputed Bluestein chirp and the transformed convolution kernel, so
/// repeated transforms (as in an STFT) skip the setup work.
pub struct DftPlan {
    n: usize,
    kind: PlanKind,
}

enum PlanKind {
    Pow2,
    Bluestein {
        m: usize,
        chirp: Vec<Complex64>,
        kernel_hat: Vec<Complex64>,
    },
}

impl DftPlan {
    pub fn new(n: usize) -> Self {
        assert!(n > 0, "transform length must be at least 1");
        if n.is_power_of_two() {
            return DftPlan { n, kind: PlanKind::Pow2 };
        }
        // Chirp phase uses k^2 reduced modulo 2n before the multiply by
        // pi/n, keeping the argument small enough that the phase stays
        // accurate for large indices.
        let two_n = 2 * n as u128;
        let chirp: Vec<Complex64> = (0..n)
            .map(|k| {
                let sq = (k as u128 * k as u128 % two_n) as f64;
                Complex64::from_polar(1.0, -PI * sq / n as f64)
            })
            .collect();
        let m = (2 * n - 1).next_power_of_two();
        // The kernel holds the conjugate chirp, wrapped so that the cyclic
        // convolution at position k realizes the linear sum over all input
        // indices.
        let mut kernel = vec![Complex64::new(0.0, 0.0); m];
        kernel[0] = chirp[0].conj();
        for k in 1..n {
            let c = chirp[k].conj();
            kernel[k] = c;
            kernel[m - k] = c;
        }
        fft_pow2(&mut kernel, false);
        DftPlan { n, kind: PlanKind::Bluestein { m, chirp, kernel_hat: kernel } }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Forward transform in conventional bin order; `x.len()` must equal
    /// the plan length.
    pub fn execute(&self, x: &[Complex64]) -> Vec<Complex64> {
        assert_eq!(x.len(), self.n, "input length does not match plan");
        match &self.kind {
            PlanKind::Pow2 => {
                let mut data = x.to_vec();
                fft_pow2(&mut data, false);
                data
            }
            PlanKind::Bluestein { m, chirp, kernel_hat } => {
                let mut a = vec![Complex64::new(0.0, 0.0); *m];
                for k in 0..self.n {
                    a[k] = x[k] * chirp[k];
                }
                fft_pow2(&mut a, false);
                for (av, bv) in a.iter_mut().zip(kernel_hat) {
                    *av *= bv;
                }
                fft_pow2(&mut a, true);
                (0..self.n).map(|k| a[k] * chirp[k]).collect()
            }
        }
    }

    /// Transforms `samples` zero-padded or truncated to the plan length,
    /// with bins reordered so frequency decreases with index.
    ///
    /// The conventional output places frequency f_j = j/(N dt) for j up
    /// to N/2 and negative frequencies above; the remap puts the most
    /// positive frequency at index 0 and the most negative last, matching
    /// an axis whose chemical-shift values descend.
    pub fn execute_descending(&self, samples: &[Complex64]) -> Result<Vec<Complex64>> {
        if samples.is_empty() {
            return Err(Error::EmptySignal("dft input"));
        }
        let n = self.n;
        let mut x = vec![Complex64::new(0.0, 0.0); n];
        let keep = samples.len().min(n);
        x[..keep].copy_from_slice(&samples[..keep]);
        let spec = self.execute(&x);

        // Highest positive frequency sits at bin (N-1)/2: for even N the
        // bins 0..=N/2-1 are non-negative frequencies, N/2..N-1 negative;
        // for odd N bins 0..=(N-1)/2 are non-negative. Walking down from
        // that bin with wraparound yields strictly descending frequency.
        let k0 = (n - 1) / 2;
        Ok((0..n).map(|j| spec[(k0 + n - j) % n]).collect())
    }

    /// Frequency in Hz of descending-order bin `j`, given the sample rate.
    pub fn descending_bin_freq_hz(&self, j: usize, sweep_width_hz: f64) -> f64 {
        let k0 = (self.n - 1) / 2;
        (k0 as f64 - j as f64) * sweep_width_hz / self.n as f64
    }
}

/// Forward DFT in the conventional order X[0..n), any length.
pub fn dft_forward(x: &[Complex64]) -> Vec<Complex64> {
    if x.is_empty() {
        return Vec::new();
    }
    DftPlan::new(x.len()).execute(x)
}

/// One-shot descending-frequency DFT; see [`DftPlan::execute_descending`].
pub fn dft_descending(samples: &[Complex64], fft_length: usize) -> Result<Vec<Complex64>> {
    if fft_length == 0 {
        return Err(Error::InvalidArg("fft_length must be at least 1".into()));
    }
    DftPlan::new(fft_length).execute_descending(samples)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    /// Textbook O(n^2) DFT used as the oracle for both transform paths.
    fn naive_dft(x: &[Complex64]) -> Vec<Complex64> {
        let n = x.len();
        (0..n)
            .map(|k| {
                let mut acc = Complex64::new(0.0, 0.0);
                for (j, v) in x.iter().enumerate() {
                    let ang = -std::f64::consts::TAU * (k * j) as f64 / n as f64;
                    acc += v * Complex64::from_polar(1.0, ang);
                }
                acc
            })
            .collect()
    }

    fn ramp_signal(n: usize) -> Vec<Complex64> {
        (0..n)
            .map(|i| Complex64::new(i as f64 * 0.37 - 1.0, (i as f64 * 0.11).sin()))
            .collect()
    }

    #[test]
    fn radix2_matches_naive_dft() {
        for n in [1usize, 2, 4, 8, 64, 256] {
            let x = ramp_signal(n);
            let got = dft_forward(&x);
            let want = naive_dft(&x);
            for (g, w) in got.iter().zip(&want) {
                assert_abs_diff_eq!(g.re, w.re, epsilon = 1e-9 * n as f64);
                assert_abs_diff_eq!(g.im, w.im, epsilon = 1e-9 * n as f64);
            }
        }
    }

    #[test]
    fn bluestein_matches_naive_dft() {
        // 446 = 2 * 223 (223 prime) is the production transform length;
        // the others exercise odd and prime sizes.
        for n in [3usize, 5, 223, 446] {
            let x = ramp_signal(n);
            let got = dft_forward(&x);
            let want = naive_dft(&x);
            for (g, w) in got.iter().zip(&want) {
                assert_abs_diff_eq!(g.re, w.re, epsilon = 1e-8 * n as f64);
                assert_abs_diff_eq!(g.im, w.im, epsilon = 1e-8 * n as f64);
            }
        }
    }

    #[test]
    fn inverse_round_trips() {
        let x = ramp_signal(128);
        let mut data = x.clone();
        fft_pow2(&mut data, false);
        fft_pow2(&mut data, true);
        for (g, w) in data.iter().zip(&x) {
            assert_abs_diff_eq!(g.re, w.re, epsilon = 1e-12);
            assert_abs_diff_eq!(g.im, w.im, epsilon = 1e-12);
        }
    }

    #[test]
    fn unit_impulse_gives_flat_spectrum() {
        let mut x = vec![Complex64::new(0.0, 0.0); 16];
        x[0] = Complex64::new(1.0, 0.0);
        let spec = dft_descending(&x, 16).unwrap();
        for v in spec {
            assert_abs_diff_eq!(v.re, 1.0, epsilon = 1e-12);
            assert_abs_diff_eq!(v.im, 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn complex_exponential_lands_on_descending_bin() {
        // x[t] = exp(i 2 pi k0 t / N) concentrates on conventional bin k0,
        // which the descending order maps to index (N-1)/2 + N - k0 mod N.
        let n = 64usize;
        let k0 = 5usize;
        let x: Vec<Complex64> = (0..n)
            .map(|t| Complex64::from_polar(1.0, std::f64::consts::TAU * (k0 * t) as f64 / n as f64))
            .collect();
        let spec = dft_descending(&x, n).unwrap();
        let expected_idx = ((n - 1) / 2 + n - k0) % n;
        let (argmax, _) = spec
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.norm().total_cmp(&b.1.norm()))
            .unwrap();
        assert_eq!(argmax, expected_idx);
        assert_abs_diff_eq!(spec[argmax].norm(), n as f64, epsilon = 1e-9);
    }

    #[test]
    fn descending_output_frequency_strictly_decreases() {
        // Frequency of descending bin j is (k0 - j)/(N dt) by construction;
        // verify via phase advancement of a single-bin probe for odd and
        // even lengths.
        for n in [15usize, 16] {
            let k0 = (n - 1) / 2;
            let freqs: Vec<i64> = (0..n)
                .map(|j| {
                    let k = (k0 + n - j) % n;
                    // Signed conventional frequency for bin k.
                    if k <= n / 2 && !(n % 2 == 0 && k == n / 2) {
                        k as i64
                    } else {
                        k as i64 - n as i64
                    }
                })
                .collect();
            for w in freqs.windows(2) {
                assert!(w[0] > w[1], "n={n}: {:?}", freqs);
            }
        }
    }

    #[test]
    fn zero_padding_interpolates_without_moving_energy() {
        let x = ramp_signal(100);
        let spec = dft_descending(&x, 446).unwrap();
        assert_eq!(spec.len(), 446);
        // Total energy is preserved by zero padding (Parseval, scaled by N).
        let input_energy: f64 = x.iter().map(|v| v.norm_sqr()).sum();
        let spec_energy: f64 = spec.iter().map(|v| v.norm_sqr()).sum();
        assert_abs_diff_eq!(spec_energy / 446.0, input_energy, epsilon = 1e-6);
    }

    #[test]
    fn empty_input_is_rejected() {
        assert!(matches!(
            dft_descending(&[], 16),
            Err(Error::EmptySignal(_))
        ));
    }
}
