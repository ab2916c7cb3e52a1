//! Input builders shared by the benchmark targets.
//!
//! Everything is generated at the published acquisition scale (160
//! transients per sub-signal, 2048-point FIDs) so the measured paths see
//! realistic sizes.

use edmrs::config::PipelineConfig;
use edmrs::model::{ModelConfig, ParamBuf, Vit};
use edmrs::simulator::{synthesize_scan, ScanRecord};
use edmrs::spectrogram::{make_spectrogram, SpectrogramConfig, SpectrogramImage};

/// One corrupted-free synthetic scan under the default configuration.
pub fn bench_scan() -> ScanRecord {
    let cfg = PipelineConfig::default();
    synthesize_scan(&cfg.basis, &cfg.axis, &cfg.simulator, 0, 42).unwrap()
}

/// Spectrogram of the first 40-transient window of `scan`, the image the
/// model consumes during training and reconstruction.
pub fn bench_spectrogram(scan: &ScanRecord) -> SpectrogramImage {
    let window = 40.min(scan.on_transients.len());
    let cfg = SpectrogramConfig::for_fid_points(scan.on_transients[0].len());
    make_spectrogram(
        &scan.on_transients[..window],
        &scan.off_transients[..window],
        &cfg,
    )
    .unwrap()
}

/// Desk-size transformer with freshly initialized parameters.
pub fn bench_model() -> (Vit, ParamBuf<f32>) {
    let vit = Vit::new(ModelConfig::desk()).unwrap();
    let params = ParamBuf::<f32>::init(&vit.layout, 42);
    (vit, params)
}
