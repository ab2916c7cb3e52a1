//! Spectrogram front end: STFT of the mean difference FID, rendered as a
//! fixed-size one-channel image for the model.
//!
//! The image pipeline runs exactly: mean(ON), mean(OFF), OFF-ON
//! difference, STFT, division by the maximum complex magnitude, real
//! part, zero-padding (top-left anchored) to 224x224. The transform
//! produces more frequency rows than the image holds, so a contiguous
//! band of rows centred on the metabolite region of interest is kept; the
//! band is recorded in the image metadata.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::fft::DftPlan;
use crate::signal::{difference_fid, mean_fid, ComplexFid};

/// Model input edge length in pixels.
pub const IMAGE_SIZE: usize = 224;

/// Taper applied to each STFT segment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WindowFn {
    Rect,
    Hann,
    Hamming,
}

impl WindowFn {
    /// Symmetric window coefficients of the given length.
    pub fn coefficients(self, len: usize) -> Vec<f64> {
        let denom = (len - 1).max(1) as f64;
        (0..len)
            .map(|i| {
                let x = std::f64::consts::TAU * i as f64 / denom;
                match self {
                    WindowFn::Rect => 1.0,
                    WindowFn::Hann => 0.5 * (1.0 - x.cos()),
                    WindowFn::Hamming => 0.54 - 0.46 * x.cos(),
                }
            })
            .collect()
    }
}

/// Short-time Fourier transform settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StftConfig {
    pub window_size: usize,
    pub hop: usize,
    pub fft_length: usize,
    pub window_fn: WindowFn,
}

impl StftConfig {
    /// Paper defaults for a given FID length: window 256, transform
    /// length 446, hop 10 below 4096 samples and 20 from there up.
    pub fn for_fid_points(fid_points: usize) -> Self {
        StftConfig {
            window_size: 256,
            hop: if fid_points >= 4096 { 20 } else { 10 },
            fft_length: 446,
            window_fn: WindowFn::Hann,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.window_size == 0 {
            return Err(Error::InvalidArg("window_size must be at least 1".into()));
        }
        if self.hop == 0 {
            return Err(Error::InvalidArg("hop must be at least 1".into()));
        }
        if self.window_size > self.fft_length {
            return Err(Error::InvalidArg(format!(
                "window_size {} exceeds fft_length {}",
                self.window_size, self.fft_length
            )));
        }
        Ok(())
    }

    /// Closed-form frame count for an input of `n` samples.
    pub fn frame_count(&self, n: usize) -> Result<usize> {
        self.validate()?;
        if n < self.window_size {
            return Err(Error::InvalidArg(format!(
                "input of {n} samples is shorter than the {}-sample window",
                self.window_size
            )));
        }
        Ok((n - self.window_size) / self.hop + 1)
    }
}

/// Complex STFT values, frequency rows (descending) by time columns.
#[derive(Debug, Clone, PartialEq)]
pub struct StftMatrix {
    pub rows: usize,
    pub cols: usize,
    /// Row-major: `data[row * cols + col]`.
    pub data: Vec<Complex64>,
}

impl StftMatrix {
    pub fn at(&self, row: usize, col: usize) -> Complex64 {
        self.data[row * self.cols + col]
    }
}

/// Windowed short-time transform with descending frequency rows.
pub fn stft(fid: &ComplexFid, cfg: &StftConfig) -> Result<StftMatrix> {
    let frames = cfg.frame_count(fid.len())?;
    let taper = cfg.window_fn.coefficients(cfg.window_size);
    let plan = DftPlan::new(cfg.fft_length);
    let mut data = vec![Complex64::new(0.0, 0.0); cfg.fft_length * frames];
    let mut segment = vec![Complex64::new(0.0, 0.0); cfg.window_size];
    for f in 0..frames {
        let start = f * cfg.hop;
        for (dst, (s, w)) in segment
            .iter_mut()
            .zip(fid.samples[start..start + cfg.window_size].iter().zip(&taper))
        {
            *dst = s * w;
        }
        let spec = plan.execute_descending(&segment)?;
        for (row, v) in spec.into_iter().enumerate() {
            data[row * frames + f] = v;
        }
    }
    Ok(StftMatrix { rows: cfg.fft_length, cols: frames, data })
}

/// Spectrogram pipeline settings: the STFT plus the frequency band kept
/// when the transform has more rows than the image.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectrogramConfig {
    pub stft: StftConfig,
    /// Region of interest whose midpoint centres the kept row band.
    pub roi_lo_ppm: f64,
    pub roi_hi_ppm: f64,
    /// Chemical shift at zero frequency offset (the axis centre).
    pub axis_center_ppm: f64,
}

impl SpectrogramConfig {
    pub fn for_fid_points(fid_points: usize) -> Self {
        SpectrogramConfig {
            stft: StftConfig::for_fid_points(fid_points),
            roi_lo_ppm: 1.5,
            roi_hi_ppm: 4.5,
            axis_center_ppm: 4.7,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.stft.validate()?;
        if !(self.roi_lo_ppm < self.roi_hi_ppm) {
            return Err(Error::InvalidArg(format!(
                "region of interest [{}, {}] is empty",
                self.roi_lo_ppm, self.roi_hi_ppm
            )));
        }
        Ok(())
    }
}

/// The model input image plus provenance of its valid region.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrogramImage {
    /// Row-major 224x224 pixels; pad region exactly zero.
    pub pixels: Vec<f64>,
    /// Valid (non-pad) frequency rows.
    pub rows_frequency: usize,
    /// Valid (non-pad) time columns.
    pub cols_time: usize,
    /// First kept row within the full transform, before band selection.
    pub band_start_row: usize,
    /// Chemical shift of the first and last kept rows.
    pub band_hi_ppm: f64,
    pub band_lo_ppm: f64,
}

impl SpectrogramImage {
    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.pixels[row * IMAGE_SIZE + col]
    }
}

/// First row of the kept frequency band for a transform of `plan_len`
/// rows over `sweep_width_hz`, centring the band on the region of
/// interest midpoint (clamped to the transform's row range).
fn band_start(
    cfg: &SpectrogramConfig,
    plan: &DftPlan,
    sweep_width_hz: f64,
    transmitter_hz: f64,
) -> usize {
    let n = plan.len();
    if n <= IMAGE_SIZE {
        return 0;
    }
    let mid_ppm = 0.5 * (cfg.roi_lo_ppm + cfg.roi_hi_ppm);
    let target_hz = (mid_ppm - cfg.axis_center_ppm) * transmitter_hz * 1e-6;
    // Row j has frequency (k0 - j) * sw / n; solve for the row nearest to
    // the target frequency.
    let k0 = ((n - 1) / 2) as f64;
    let j = (k0 - target_hz * n as f64 / sweep_width_hz).round();
    let centre = j.clamp(0.0, (n - 1) as f64) as usize;
    centre.saturating_sub(IMAGE_SIZE / 2).min(n - IMAGE_SIZE)
}

/// Builds the model input image from one paired transient window.
pub fn make_spectrogram(
    on: &[ComplexFid],
    off: &[ComplexFid],
    cfg: &SpectrogramConfig,
) -> Result<SpectrogramImage> {
    cfg.validate()?;
    if on.len() != off.len() {
        return Err(Error::LengthMismatch {
            context: "ON vs OFF window transient counts",
            left: on.len(),
            right: off.len(),
        });
    }
    let mean_on = mean_fid(on)?;
    let mean_off = mean_fid(off)?;
    let diff = difference_fid(&mean_on, &mean_off)?;

    let matrix = stft(&diff, &cfg.stft)?;
    if matrix.cols > IMAGE_SIZE {
        return Err(Error::InvalidArg(format!(
            "{} STFT frames exceed the {IMAGE_SIZE}-column image; increase hop",
            matrix.cols
        )));
    }
    let plan = DftPlan::new(cfg.stft.fft_length);
    let sw = diff.sweep_width_hz();
    let start = band_start(cfg, &plan, sw, diff.transmitter_hz);
    let rows = matrix.rows.min(IMAGE_SIZE);

    let mut max_mag = 0.0f64;
    for r in 0..rows {
        for c in 0..matrix.cols {
            max_mag = max_mag.max(matrix.at(start + r, c).norm());
        }
    }
    if max_mag == 0.0 {
        return Err(Error::DegenerateSignal("spectrogram normalization divisor"));
    }

    let mut pixels = vec![0.0f64; IMAGE_SIZE * IMAGE_SIZE];
    for r in 0..rows {
        for c in 0..matrix.cols {
            pixels[r * IMAGE_SIZE + c] = (matrix.at(start + r, c) / max_mag).re;
        }
    }
    let to_ppm = |row: usize| {
        cfg.axis_center_ppm
            + plan.descending_bin_freq_hz(row, sw) / (diff.transmitter_hz * 1e-6)
    };
    Ok(SpectrogramImage {
        pixels,
        rows_frequency: rows,
        cols_time: matrix.cols,
        band_start_row: start,
        band_hi_ppm: to_ppm(start),
        band_lo_ppm: to_ppm(start + rows - 1),
    })
}

/// Writes the image as a binary 8-bit PGM, mapping [-1, 1] to [0, 255].
pub fn write_pgm(img: &SpectrogramImage, path: &Path) -> Result<()> {
    let mut out = Vec::with_capacity(IMAGE_SIZE * IMAGE_SIZE + 32);
    out.extend_from_slice(format!("P5\n{IMAGE_SIZE} {IMAGE_SIZE}\n255\n").as_bytes());
    out.extend(
        img.pixels
            .iter()
            .map(|v| (((v.clamp(-1.0, 1.0) + 1.0) / 2.0) * 255.0).round() as u8),
    );
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[derive(Serialize)]
struct RawSidecar<'a> {
    rows: usize,
    cols: usize,
    dtype: &'static str,
    byte_order: &'static str,
    rows_frequency: usize,
    cols_time: usize,
    band_start_row: usize,
    band_hi_ppm: f64,
    band_lo_ppm: f64,
    stft: &'a StftConfig,
}

/// Writes the image as raw little-endian f32 values plus a JSON sidecar
/// describing dimensions, band, and STFT settings. `base` gains `.f32`
/// and `.json` extensions.
pub fn write_raw_f32(img: &SpectrogramImage, stft_cfg: &StftConfig, base: &Path) -> Result<()> {
    let raw_path = base.with_extension("f32");
    let mut raw = Vec::with_capacity(IMAGE_SIZE * IMAGE_SIZE * 4);
    for v in &img.pixels {
        raw.write_all(&(*v as f32).to_le_bytes()).expect("vec write");
    }
    std::fs::write(&raw_path, raw).map_err(|e| Error::io(&raw_path, e))?;

    let sidecar = RawSidecar {
        rows: IMAGE_SIZE,
        cols: IMAGE_SIZE,
        dtype: "f32",
        byte_order: "little",
        rows_frequency: img.rows_frequency,
        cols_time: img.cols_time,
        band_start_row: img.band_start_row,
        band_hi_ppm: img.band_hi_ppm,
        band_lo_ppm: img.band_lo_ppm,
        stft: stft_cfg,
    };
    let json_path = base.with_extension("json");
    let text = serde_json::to_string_pretty(&sidecar)
        .map_err(|e| Error::Format(format!("sidecar serialization: {e}")))?;
    std::fs::write(&json_path, text).map_err(|e| Error::io(&json_path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fft::dft_descending;
    use crate::signal::EditLabel;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn exponential_fid(n: usize, freq: f64, decay: f64) -> ComplexFid {
        let dwell = 5e-4;
        let samples = (0..n)
            .map(|i| {
                let t = i as f64 * dwell;
                Complex64::from_polar((-t * decay).exp(), std::f64::consts::TAU * freq * t)
            })
            .collect();
        ComplexFid::new(samples, dwell, 127.7e6, None).unwrap()
    }

    #[test]
    fn default_config_gives_180_frames_for_2048_points() {
        let cfg = StftConfig::for_fid_points(2048);
        assert_eq!((cfg.window_size, cfg.hop, cfg.fft_length), (256, 10, 446));
        assert_eq!(cfg.frame_count(2048).unwrap(), 180);
        let m = stft(&exponential_fid(2048, 150.0, 5.0), &cfg).unwrap();
        assert_eq!((m.rows, m.cols), (446, 180));
        // The 4096-point preset doubles the hop: (4096-256)/20 + 1 frames.
        let cfg4096 = StftConfig::for_fid_points(4096);
        assert_eq!(cfg4096.hop, 20);
        assert_eq!(cfg4096.frame_count(4096).unwrap(), 193);
    }

    #[test]
    fn frames_match_independent_windowed_dfts() {
        let cfg = StftConfig { window_size: 64, hop: 16, fft_length: 100, window_fn: WindowFn::Hann };
        let fid = exponential_fid(256, 200.0, 8.0);
        let m = stft(&fid, &cfg).unwrap();
        let taper = WindowFn::Hann.coefficients(64);
        for f in 0..m.cols {
            let seg: Vec<Complex64> = fid.samples[f * 16..f * 16 + 64]
                .iter()
                .zip(&taper)
                .map(|(s, w)| s * w)
                .collect();
            let want = dft_descending(&seg, 100).unwrap();
            for (row, w) in want.iter().enumerate() {
                let g = m.at(row, f);
                let scale = w.norm().max(1.0);
                assert!(
                    (g - w).norm() / scale < 1e-10,
                    "frame {f} row {row}: {g} vs {w}"
                );
            }
        }
    }

    #[test]
    fn stationary_tone_keeps_its_bin_across_frames() {
        let cfg = StftConfig::for_fid_points(2048);
        let fid = exponential_fid(2048, 300.0, 0.0);
        let m = stft(&fid, &cfg).unwrap();
        let argmax = |col: usize| {
            (0..m.rows)
                .max_by(|&a, &b| m.at(a, col).norm().total_cmp(&m.at(b, col).norm()))
                .unwrap()
        };
        let first = argmax(0);
        for f in 1..m.cols {
            assert_eq!(argmax(f), first, "frame {f} moved");
        }
    }

    #[test]
    fn tone_energy_stays_within_two_bins_every_frame() {
        // Hann taper: at least 90% of each frame's energy within +/-2 bins
        // of the tone's bin, including off-bin-centre frequencies.
        for freq in [300.0, 301.3] {
            let cfg = StftConfig::for_fid_points(2048);
            let fid = exponential_fid(2048, freq, 0.0);
            let m = stft(&fid, &cfg).unwrap();
            for f in 0..m.cols {
                let total: f64 = (0..m.rows).map(|r| m.at(r, f).norm_sqr()).sum();
                let peak = (0..m.rows)
                    .max_by(|&a, &b| m.at(a, f).norm().total_cmp(&m.at(b, f).norm()))
                    .unwrap();
                let lo = peak.saturating_sub(2);
                let hi = (peak + 2).min(m.rows - 1);
                let local: f64 = (lo..=hi).map(|r| m.at(r, f).norm_sqr()).sum();
                assert!(
                    local / total >= 0.90,
                    "freq {freq} frame {f}: {:.3} of energy near bin {peak}",
                    local / total
                );
            }
        }
    }

    proptest! {
        #[test]
        fn frame_count_matches_formula(
            n in 64usize..3000,
            window in 2usize..256,
            hop in 1usize..64,
        ) {
            prop_assume!(window <= n);
            let cfg = StftConfig { window_size: window, hop, fft_length: 512, window_fn: WindowFn::Rect };
            let fid = exponential_fid(n, 100.0, 3.0);
            let m = stft(&fid, &cfg).unwrap();
            prop_assert_eq!(m.cols, (n - window) / hop + 1);
        }
    }

    #[test]
    fn short_input_is_rejected() {
        let cfg = StftConfig::for_fid_points(2048);
        let fid = exponential_fid(100, 100.0, 3.0);
        assert!(matches!(stft(&fid, &cfg), Err(Error::InvalidArg(_))));
    }

    fn paired_window(n_fid: usize) -> (Vec<ComplexFid>, Vec<ComplexFid>) {
        // Distinct ON/OFF content so the difference is nonzero.
        let mut on = exponential_fid(n_fid, -100.0, 4.0);
        on.edit_label = Some(EditLabel::On);
        let mut off = exponential_fid(n_fid, -100.0, 4.0);
        for (i, s) in off.samples.iter_mut().enumerate() {
            let t = i as f64 * off.dwell_time;
            *s += Complex64::from_polar(
                2.0 * (-t * 6.0).exp(),
                std::f64::consts::TAU * (-217.0) * t,
            );
        }
        off.edit_label = Some(EditLabel::Off);
        (vec![on; 4], vec![off; 4])
    }

    #[test]
    fn image_is_normalized_banded_and_zero_padded() {
        let (on, off) = paired_window(2048);
        let cfg = SpectrogramConfig::for_fid_points(2048);
        let img = make_spectrogram(&on, &off, &cfg).unwrap();
        assert_eq!(img.pixels.len(), IMAGE_SIZE * IMAGE_SIZE);
        assert_eq!(img.rows_frequency, 224);
        assert_eq!(img.cols_time, 180);
        // All valid pixels within the normalization bound.
        for r in 0..img.rows_frequency {
            for c in 0..img.cols_time {
                assert!(img.at(r, c).abs() <= 1.0 + 1e-12);
            }
        }
        // Pad region exactly zero.
        for r in 0..IMAGE_SIZE {
            for c in 0..IMAGE_SIZE {
                if r >= img.rows_frequency || c >= img.cols_time {
                    assert_eq!(img.at(r, c), 0.0, "pad at ({r},{c})");
                }
            }
        }
        // The kept band covers the region of interest.
        assert!(img.band_hi_ppm >= cfg.roi_hi_ppm);
        assert!(img.band_lo_ppm <= cfg.roi_lo_ppm);
    }

    #[test]
    fn normalization_divisor_is_max_complex_magnitude() {
        // Recompute the pipeline by hand and compare one pixel.
        let (on, off) = paired_window(2048);
        let cfg = SpectrogramConfig::for_fid_points(2048);
        let img = make_spectrogram(&on, &off, &cfg).unwrap();

        let mean_on = mean_fid(&on).unwrap();
        let mean_off = mean_fid(&off).unwrap();
        let diff = difference_fid(&mean_on, &mean_off).unwrap();
        let m = stft(&diff, &cfg.stft).unwrap();
        let mut max_mag = 0.0f64;
        for r in 0..img.rows_frequency {
            for c in 0..m.cols {
                max_mag = max_mag.max(m.at(img.band_start_row + r, c).norm());
            }
        }
        // The complex magnitude of the hottest entry reaches exactly 1
        // before the real part is taken.
        let mut seen_unit = false;
        for r in 0..img.rows_frequency {
            for c in 0..m.cols {
                let z = m.at(img.band_start_row + r, c) / max_mag;
                if (z.norm() - 1.0).abs() < 1e-12 {
                    seen_unit = true;
                }
                assert_abs_diff_eq!(img.at(r, c), z.re, epsilon = 1e-12);
            }
        }
        assert!(seen_unit);
    }

    #[test]
    fn repeated_calls_are_bit_identical() {
        let (on, off) = paired_window(512);
        let cfg = SpectrogramConfig::for_fid_points(512);
        let a = make_spectrogram(&on, &off, &cfg).unwrap();
        let b = make_spectrogram(&on, &off, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn identical_on_off_is_degenerate() {
        let (on, _) = paired_window(512);
        let off: Vec<ComplexFid> = on
            .iter()
            .map(|f| ComplexFid { edit_label: Some(EditLabel::Off), ..f.clone() })
            .collect();
        let cfg = SpectrogramConfig::for_fid_points(512);
        assert!(matches!(
            make_spectrogram(&on, &off, &cfg),
            Err(Error::DegenerateSignal(_))
        ));
    }

    #[test]
    fn band_sits_inside_transform_rows() {
        let (on, off) = paired_window(2048);
        let cfg = SpectrogramConfig::for_fid_points(2048);
        let img = make_spectrogram(&on, &off, &cfg).unwrap();
        assert!(img.band_start_row + img.rows_frequency <= cfg.stft.fft_length);
        // Default geometry: band centred near 3.0 ppm.
        let mid = 0.5 * (img.band_hi_ppm + img.band_lo_ppm);
        assert!((mid - 3.0).abs() < 0.1, "band centre at {mid} ppm");
    }

    #[test]
    fn dumps_write_expected_formats() {
        let (on, off) = paired_window(512);
        let cfg = SpectrogramConfig::for_fid_points(512);
        let img = make_spectrogram(&on, &off, &cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();

        let pgm = dir.path().join("img.pgm");
        write_pgm(&img, &pgm).unwrap();
        let bytes = std::fs::read(&pgm).unwrap();
        assert!(bytes.starts_with(b"P5\n224 224\n255\n"));
        assert_eq!(bytes.len(), 15 + IMAGE_SIZE * IMAGE_SIZE);

        let base = dir.path().join("img");
        write_raw_f32(&img, &cfg.stft, &base).unwrap();
        let raw = std::fs::read(dir.path().join("img.f32")).unwrap();
        assert_eq!(raw.len(), IMAGE_SIZE * IMAGE_SIZE * 4);
        let sidecar: serde_json::Value =
            serde_json::from_slice(&std::fs::read(dir.path().join("img.json")).unwrap()).unwrap();
        assert_eq!(sidecar["rows"], 224);
        assert_eq!(sidecar["cols_time"], img.cols_time as u64);
        assert_eq!(sidecar["stft"]["window_size"], 256);
    }
}
