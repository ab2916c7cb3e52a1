//! End-to-end commands shared by the command-line front end and the test
//! suites: dataset generation, model training, per-scan reconstruction,
//! metric evaluation, and sub-signal group comparison.
//!
//! Every text output begins with comment lines: reconstruction files carry
//! `# pipeline` and `# group` tags, and all files embed the resolved
//! configuration, so a result file identifies the run that produced it.
//! All floating-point values are written with the shortest representation
//! that parses back to the same bits, which keeps repeated runs
//! byte-identical.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::json;

use crate::config::PipelineConfig;
use crate::dataset::{read_dataset, simulate_dataset, Dataset, ScanGenerator, SimulateSummary};
use crate::error::{Error, Result};
use crate::fit::{quantify, QuantResult};
use crate::metrics::{fwhm_gaba, mse_windowed, shape_score, snr_gaba};
use crate::model::{
    export_params, import_params, train_from, EpochRow, ParamBuf, TrainOutcome, TrainStart, Vit,
};
use crate::signal::{
    apodize, difference_fid, mean_fid, normalize_max_abs, ComplexFid, PpmAxis, Spectrum,
};
use crate::simulator::{
    group_slices, jittered_basis, spectrum_on_axis, water_reference, ScanRecord,
};
use crate::spectrogram::{make_spectrogram, SpectrogramConfig};
use crate::stats::{wilcoxon_signed_rank, WilcoxonResult};

/// Reconstruction strategies that can produce a difference spectrum from
/// a stored scan.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PipelineKind {
    /// Transformer applied to one quarter-group spectrogram.
    VitModel,
    /// Average of one quarter group of the transients.
    QuarterAverage,
    /// Average of every transient in the scan.
    FullAverage,
}

impl PipelineKind {
    pub const ALL: [PipelineKind; 3] =
        [PipelineKind::VitModel, PipelineKind::QuarterAverage, PipelineKind::FullAverage];

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "vit" => Ok(PipelineKind::VitModel),
            "quarter" => Ok(PipelineKind::QuarterAverage),
            "full" => Ok(PipelineKind::FullAverage),
            other => Err(Error::InvalidArg(format!(
                "unknown pipeline '{other}' (expected 'vit', 'quarter', or 'full')"
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            PipelineKind::VitModel => "vit",
            PipelineKind::QuarterAverage => "quarter",
            PipelineKind::FullAverage => "full",
        }
    }

    /// Name of the reconstruction file this pipeline writes and reads.
    pub fn recon_file(self) -> String {
        format!("recon_{}.csv", self.name())
    }
}

/// Selects one of the three dataset split files.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitName {
    Train,
    Val,
    Test,
}

impl SplitName {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(SplitName::Train),
            "val" => Ok(SplitName::Val),
            "test" => Ok(SplitName::Test),
            other => Err(Error::InvalidArg(format!(
                "unknown split '{other}' (expected 'train', 'val', or 'test')"
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SplitName::Train => "train",
            SplitName::Val => "val",
            SplitName::Test => "test",
        }
    }

    pub fn file_name(self) -> &'static str {
        crate::dataset::SPLIT_FILES[match self {
            SplitName::Train => 0,
            SplitName::Val => 1,
            SplitName::Test => 2,
        }]
    }
}

/// Reads one split file and checks it was generated on the configured
/// axis, so stored targets and computed spectra line up.
pub fn load_split(cfg: &PipelineConfig, split: SplitName) -> Result<Dataset> {
    let path = cfg.paths.data_dir.join(split.file_name());
    let ds = read_dataset(&path)?;
    if ds.header.axis != cfg.axis {
        return Err(Error::MetadataMismatch(format!(
            "{}: dataset axis differs from the configured axis",
            path.display()
        )));
    }
    Ok(ds)
}

/// Difference spectrum of averaged transients, line-broadened to the
/// target width and max-abs normalized. This is the estimator the model
/// is compared against, and it estimates the same normalized clean
/// spectrum the model was trained to predict.
pub fn average_reconstruction(
    on: &[ComplexFid],
    off: &[ComplexFid],
    axis: &PpmAxis,
    lb_hz: f64,
) -> Result<Spectrum> {
    let diff = apodize(&difference_fid(&mean_fid(on)?, &mean_fid(off)?)?, lb_hz);
    let spec = spectrum_on_axis(&diff, axis)?;
    let (values, _) = normalize_max_abs(&spec.values)?;
    Spectrum::new(values, *axis)
}

/// Averaged OFF sub-signal spectrum used as the creatine reference,
/// processed with the same broadening and normalization as the
/// difference spectra.
pub fn off_spectrum(off: &[ComplexFid], axis: &PpmAxis, lb_hz: f64) -> Result<Spectrum> {
    let fid = apodize(&mean_fid(off)?, lb_hz);
    let spec = spectrum_on_axis(&fid, axis)?;
    let (values, _) = normalize_max_abs(&spec.values)?;
    Spectrum::new(values, *axis)
}

/// Rebuilds the scan's unsuppressed water acquisition from its stored
/// seed. Every pipeline quantifies against this same reference, so the
/// water denominator never differs between reconstructions of one scan.
pub fn scan_water_fid(
    cfg: &PipelineConfig,
    scan: &ScanRecord,
    fid_points: usize,
) -> Result<ComplexFid> {
    let basis = jittered_basis(&cfg.basis, &cfg.simulator.jitter, scan.corruption.rng_seed);
    water_reference(&basis, &cfg.axis, fid_points)
}

/// A loaded reconstruction strategy. Averaging kinds carry no state; the
/// model kind holds the network and its imported parameters.
#[derive(Debug, Clone)]
pub struct Reconstructor {
    kind: PipelineKind,
    /// Quarter group fed to the model or the quarter average; the full
    /// average ignores it.
    group: usize,
    apodize_hz: f64,
    model: Option<(Vit, ParamBuf<f32>)>,
}

impl Reconstructor {
    pub fn new(cfg: &PipelineConfig, kind: PipelineKind, group: usize) -> Result<Self> {
        if !(1..=4).contains(&group) {
            return Err(Error::InvalidArg(format!("group must be 1..=4, got {group}")));
        }
        let model = match kind {
            PipelineKind::VitModel => {
                let (params, _) = import_params(&cfg.paths.params)?.into_checked(&cfg.model)?;
                Some((Vit::new(cfg.model)?, params))
            }
            _ => None,
        };
        Ok(Reconstructor { kind, group, apodize_hz: cfg.simulator.target_apodize_hz, model })
    }

    pub fn kind(&self) -> PipelineKind {
        self.kind
    }

    pub fn group(&self) -> usize {
        self.group
    }

    /// Reconstructs one scan to a max-abs-normalized difference spectrum
    /// on the given axis.
    pub fn reconstruct(&self, scan: &ScanRecord, axis: &PpmAxis) -> Result<Spectrum> {
        match self.kind {
            PipelineKind::FullAverage => average_reconstruction(
                &scan.on_transients,
                &scan.off_transients,
                axis,
                self.apodize_hz,
            ),
            PipelineKind::QuarterAverage => {
                let (on, off) = group_slices(scan, self.group)?;
                average_reconstruction(on, off, axis, self.apodize_hz)
            }
            PipelineKind::VitModel => {
                let (on, off) = group_slices(scan, self.group)?;
                let spec_cfg = SpectrogramConfig::for_fid_points(on[0].len());
                let image = make_spectrogram(on, off, &spec_cfg)?;
                let (vit, params) = self.model.as_ref().expect("model kind holds parameters");
                let trace = vit.forward::<f32>(params, &image.pixels)?;
                let (values, _) = normalize_max_abs(&trace.output_f64())?;
                Spectrum::new(values, *axis)
            }
        }
    }

    /// The OFF-spectrum this pipeline is allowed to quantify creatine
    /// from: its own input transients.
    pub fn off_reference(&self, scan: &ScanRecord, axis: &PpmAxis) -> Result<Spectrum> {
        match self.kind {
            PipelineKind::FullAverage => off_spectrum(&scan.off_transients, axis, self.apodize_hz),
            _ => {
                let (_, off) = group_slices(scan, self.group)?;
                off_spectrum(off, axis, self.apodize_hz)
            }
        }
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    Ok(())
}

/// Generates `n_scans` corrupted scans under the configured seed and
/// writes the three split files into the data directory.
pub fn cmd_simulate(cfg: &PipelineConfig, n_scans: usize) -> Result<SimulateSummary> {
    cfg.validate()?;
    if n_scans == 0 {
        return Err(Error::InvalidArg("cannot simulate a dataset of 0 scans".into()));
    }
    let gen = ScanGenerator {
        basis: &cfg.basis,
        axis: &cfg.axis,
        sim: &cfg.simulator,
        corruption_max: &cfg.corruption,
        dataset_seed: cfg.seed,
    };
    simulate_dataset(&gen, n_scans, cfg.split, &cfg.paths.data_dir)
}

/// Result of [`cmd_train`]: the outcome plus where the parameters and the
/// loss log were written.
#[derive(Debug, Clone)]
pub struct TrainReport {
    pub outcome: TrainOutcome,
    pub params_path: PathBuf,
    pub loss_csv: PathBuf,
}

/// Trains the configured model on the train split, scoring the val split
/// after every epoch, then writes the parameter file and a loss log.
/// With `resume` the existing parameter file seeds the run and the
/// optimizer step count continues from the stored value.
pub fn cmd_train(
    cfg: &PipelineConfig,
    resume: bool,
    on_epoch: impl FnMut(&EpochRow),
) -> Result<TrainReport> {
    cfg.validate()?;
    let train_ds = load_split(cfg, SplitName::Train)?;
    let val_scans = if cfg.paths.data_dir.join(SplitName::Val.file_name()).exists() {
        load_split(cfg, SplitName::Val)?.scans
    } else {
        Vec::new()
    };
    let start = if resume {
        let (params, adam_step) = import_params(&cfg.paths.params)?.into_checked(&cfg.model)?;
        Some(TrainStart { params, adam_step })
    } else {
        None
    };
    let outcome = train_from(
        cfg.model,
        &cfg.train,
        &train_ds.scans,
        &val_scans,
        &cfg.axis,
        start,
        on_epoch,
    )?;

    let params_path = cfg.paths.params.clone();
    ensure_parent(&params_path)?;
    let vit = Vit::new(cfg.model)?;
    export_params(&params_path, &vit, &outcome.params, outcome.adam_steps)?;

    fs::create_dir_all(&cfg.paths.out_dir).map_err(|e| Error::io(&cfg.paths.out_dir, e))?;
    let loss_csv = cfg.paths.out_dir.join("loss.csv");
    let mut text = cfg.echo_comment_block();
    text.push_str("epoch,train_loss,val_loss,wall_seconds\n");
    let _ = writeln!(text, "0,NaN,{},0", outcome.initial_val_loss);
    for row in &outcome.log {
        let _ = writeln!(
            text,
            "{},{},{},{}",
            row.epoch, row.train_loss, row.val_loss, row.wall_seconds
        );
    }
    write_text(&loss_csv, &text)?;
    Ok(TrainReport { outcome, params_path, loss_csv })
}

/// Result of [`cmd_reconstruct`]: the file written and how many scans it
/// holds.
#[derive(Debug, Clone, PartialEq)]
pub struct ReconstructReport {
    pub csv_path: PathBuf,
    pub n_scans: usize,
}

/// Reconstructs every scan of a split with one pipeline and writes the
/// spectra as CSV rows under `# pipeline` and `# group` tags. `group`
/// selects the quarter for the model and quarter pipelines; the full
/// average ignores it.
pub fn cmd_reconstruct(
    cfg: &PipelineConfig,
    kind: PipelineKind,
    split: SplitName,
    group: usize,
) -> Result<ReconstructReport> {
    cfg.validate()?;
    let ds = load_split(cfg, split)?;
    let recon = Reconstructor::new(cfg, kind, group)?;

    let mut text = format!("# pipeline = {}\n# group = {}\n", kind.name(), group);
    text.push_str(&cfg.echo_comment_block());
    text.push_str("scan_id");
    for ppm in cfg.axis.values() {
        let _ = write!(text, ",{ppm}");
    }
    text.push('\n');
    for scan in &ds.scans {
        let spec = recon.reconstruct(scan, &cfg.axis)?;
        let _ = write!(text, "{}", scan.scan_id);
        for v in &spec.values {
            let _ = write!(text, ",{v}");
        }
        text.push('\n');
    }

    fs::create_dir_all(&cfg.paths.out_dir).map_err(|e| Error::io(&cfg.paths.out_dir, e))?;
    let csv_path = cfg.paths.out_dir.join(kind.recon_file());
    write_text(&csv_path, &text)?;
    Ok(ReconstructReport { csv_path, n_scans: ds.scans.len() })
}

/// Parsed contents of a reconstruction file.
#[derive(Debug, Clone, PartialEq)]
pub struct ReconSeries {
    pub pipeline: String,
    pub group: usize,
    /// One `(scan_id, spectrum values)` row per scan, in file order.
    pub rows: Vec<(u32, Vec<f64>)>,
}

/// Reads a reconstruction file back, checking its tags and that its ppm
/// header matches the given axis value for value.
pub fn read_recon_csv(path: &Path, axis: &PpmAxis) -> Result<ReconSeries> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let fail = |msg: String| Error::Format(format!("{}: {msg}", path.display()));

    let mut pipeline = None;
    let mut group = None;
    let mut lines = text.lines();
    let mut header = None;
    for line in &mut lines {
        if let Some(comment) = line.strip_prefix('#') {
            let comment = comment.trim();
            if let Some(v) = comment.strip_prefix("pipeline =") {
                pipeline = Some(v.trim().to_string());
            } else if let Some(v) = comment.strip_prefix("group =") {
                group = Some(
                    v.trim()
                        .parse::<usize>()
                        .map_err(|e| fail(format!("bad group tag: {e}")))?,
                );
            }
        } else {
            header = Some(line);
            break;
        }
    }
    let pipeline = pipeline.ok_or_else(|| fail("missing '# pipeline =' tag".into()))?;
    let group = group.ok_or_else(|| fail("missing '# group =' tag".into()))?;
    let header = header.ok_or_else(|| fail("missing column header".into()))?;

    let mut cols = header.split(',');
    if cols.next() != Some("scan_id") {
        return Err(fail("column header must start with scan_id".into()));
    }
    let ppm: Vec<f64> = cols
        .map(|c| c.parse::<f64>().map_err(|e| fail(format!("bad ppm column '{c}': {e}"))))
        .collect::<Result<_>>()?;
    if ppm.len() != axis.n_points {
        return Err(Error::LengthMismatch {
            context: "reconstruction columns vs axis points",
            left: ppm.len(),
            right: axis.n_points,
        });
    }
    if ppm != axis.values() {
        return Err(Error::MetadataMismatch(format!(
            "{}: ppm header differs from the configured axis",
            path.display()
        )));
    }

    let mut rows = Vec::new();
    for line in lines {
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split(',');
        let id = fields
            .next()
            .ok_or_else(|| fail("empty row".into()))?
            .parse::<u32>()
            .map_err(|e| fail(format!("bad scan id: {e}")))?;
        let values: Vec<f64> = fields
            .map(|f| f.parse::<f64>().map_err(|e| fail(format!("bad value '{f}': {e}"))))
            .collect::<Result<_>>()?;
        if values.len() != axis.n_points {
            return Err(Error::LengthMismatch {
                context: "reconstruction row vs axis points",
                left: values.len(),
                right: axis.n_points,
            });
        }
        rows.push((id, values));
    }
    Ok(ReconSeries { pipeline, group, rows })
}

/// Mean and population standard deviation of one metric column.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

fn mean_std(values: &[f64]) -> MeanStd {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    MeanStd { mean, std: var.sqrt() }
}

/// The five per-scan quality metrics of one reconstruction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricRow {
    pub scan_id: u32,
    pub mse: f64,
    pub snr: f64,
    pub fwhm_ppm: f64,
    pub shape_score: f64,
    pub fit_error_percent: f64,
}

/// Mean and spread of each of the five metrics over a split.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MetricSummary {
    pub mse: MeanStd,
    pub snr: MeanStd,
    pub fwhm_ppm: MeanStd,
    pub shape_score: MeanStd,
    pub fit_error_percent: MeanStd,
}

fn summarize_metrics(rows: &[MetricRow]) -> MetricSummary {
    let col = |f: fn(&MetricRow) -> f64| mean_std(&rows.iter().map(f).collect::<Vec<_>>());
    MetricSummary {
        mse: col(|r| r.mse),
        snr: col(|r| r.snr),
        fwhm_ppm: col(|r| r.fwhm_ppm),
        shape_score: col(|r| r.shape_score),
        fit_error_percent: col(|r| r.fit_error_percent),
    }
}

/// Mean and spread of the three metabolite ratios over a split.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct QuantSummary {
    pub gaba_water: MeanStd,
    pub gaba_cr: MeanStd,
    pub glx_water: MeanStd,
}

fn summarize_quant(rows: &[(u32, QuantResult)]) -> QuantSummary {
    let col = |f: fn(&QuantResult) -> f64| {
        mean_std(&rows.iter().map(|(_, q)| f(q)).collect::<Vec<_>>())
    };
    QuantSummary {
        gaba_water: col(|q| q.gaba_water),
        gaba_cr: col(|q| q.gaba_cr),
        glx_water: col(|q| q.glx_water),
    }
}

/// Everything measured about one pipeline during an evaluation run.
#[derive(Debug, Clone)]
pub struct PipelineEvaluation {
    pub kind: PipelineKind,
    pub group: usize,
    /// Reconstructed spectrum values, one row per scan in split order.
    pub spectra: Vec<Vec<f64>>,
    pub rows: Vec<MetricRow>,
    pub quant: Vec<(u32, QuantResult)>,
    pub summary: MetricSummary,
    pub quant_summary: QuantSummary,
}

/// Result of [`cmd_evaluate`]: per-pipeline tables and summaries, paired
/// tests against the full average, and the files written.
#[derive(Debug, Clone)]
pub struct EvaluateReport {
    pub pipelines: Vec<PipelineEvaluation>,
    /// Signed-rank test of per-scan GABA+/water against the full average,
    /// one entry per non-full pipeline. `None` means fewer than five
    /// nonzero paired differences remained, including the case of
    /// identical quantifications.
    pub wilcoxon_gaba_water: Vec<(PipelineKind, Option<WilcoxonResult>)>,
    pub metrics_csv: PathBuf,
    pub quantification_csv: PathBuf,
    pub summary_json: PathBuf,
    pub overlay_csv: PathBuf,
    pub svg_dir: Option<PathBuf>,
}

fn svg_color(name: &str) -> &'static str {
    match name {
        "target" => "#222222",
        "vit" => "#d62728",
        "quarter" => "#1f77b4",
        "full" => "#2ca02c",
        _ => "#888888",
    }
}

/// Writes one scan's window as an SVG overlay: ppm decreasing to the
/// right, all series sharing one vertical scale.
fn write_scan_svg(path: &Path, ppm: &[f64], series: &[(&str, &[f64])]) -> Result<()> {
    const W: f64 = 800.0;
    const H: f64 = 400.0;
    const M: f64 = 30.0;
    let hi = ppm[0];
    let lo = ppm[ppm.len() - 1];
    let mut vmin = f64::INFINITY;
    let mut vmax = f64::NEG_INFINITY;
    for (_, vals) in series {
        for &v in *vals {
            vmin = vmin.min(v);
            vmax = vmax.max(v);
        }
    }
    if !(vmax > vmin) {
        vmax = vmin + 1.0;
    }
    let x = |p: f64| M + (hi - p) / (hi - lo) * (W - 2.0 * M);
    let y = |v: f64| M + (vmax - v) / (vmax - vmin) * (H - 2.0 * M);

    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" \
         viewBox=\"0 0 {W} {H}\">\n"
    );
    for (i, (name, vals)) in series.iter().enumerate() {
        let _ = write!(s, "  <polyline fill=\"none\" stroke=\"{}\" points=\"", svg_color(name));
        for (p, v) in ppm.iter().zip(*vals) {
            let _ = write!(s, "{:.2},{:.2} ", x(*p), y(*v));
        }
        s.push_str("\"/>\n");
        let _ = writeln!(
            s,
            "  <text x=\"{}\" y=\"{}\" fill=\"{}\" font-size=\"14\">{}</text>",
            W - M - 70.0,
            M + 16.0 * (i as f64 + 1.0),
            svg_color(name),
            name
        );
    }
    let _ = writeln!(
        s,
        "  <text x=\"{M}\" y=\"{:.2}\" fill=\"#555555\" font-size=\"12\">{hi} ppm</text>",
        H - 8.0
    );
    let _ = writeln!(
        s,
        "  <text x=\"{:.2}\" y=\"{:.2}\" fill=\"#555555\" font-size=\"12\">{lo} ppm</text>",
        W - M - 50.0,
        H - 8.0
    );
    s.push_str("</svg>\n");
    write_text(path, &s)
}

/// Scores previously written reconstructions of one split: five metrics
/// and three metabolite ratios per scan and pipeline, summary statistics,
/// and a signed-rank comparison of GABA+/water against the full average.
/// Writes `metrics.csv`, `quantification.csv`, `summary.json`, and
/// `overlay.csv`; with `svg` also one overlay image per scan.
pub fn cmd_evaluate(
    cfg: &PipelineConfig,
    kinds: &[PipelineKind],
    split: SplitName,
    svg: bool,
) -> Result<EvaluateReport> {
    cfg.validate()?;
    if kinds.is_empty() {
        return Err(Error::InvalidArg("no pipelines requested".into()));
    }
    let ds = load_split(cfg, split)?;
    if ds.scans.is_empty() {
        return Err(Error::InvalidArg(format!("{} split holds no scans", split.name())));
    }
    let out_dir = &cfg.paths.out_dir;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let w = &cfg.metrics;
    let lb = cfg.simulator.target_apodize_hz;
    let fid_points = ds.header.n_fid_points as usize;

    let water: Vec<ComplexFid> = ds
        .scans
        .iter()
        .map(|scan| scan_water_fid(cfg, scan, fid_points))
        .collect::<Result<_>>()?;

    let mut evals: Vec<PipelineEvaluation> = Vec::new();
    for &kind in kinds {
        let path = out_dir.join(kind.recon_file());
        let series = read_recon_csv(&path, &cfg.axis)?;
        if series.pipeline != kind.name() {
            return Err(Error::MetadataMismatch(format!(
                "{}: tagged pipeline '{}' is not '{}'",
                path.display(),
                series.pipeline,
                kind.name()
            )));
        }
        if series.rows.len() != ds.scans.len()
            || series
                .rows
                .iter()
                .zip(&ds.scans)
                .any(|((id, _), scan)| *id != scan.scan_id)
        {
            return Err(Error::MetadataMismatch(format!(
                "{}: scan ids do not match the {} split",
                path.display(),
                split.name()
            )));
        }

        let mut rows = Vec::with_capacity(ds.scans.len());
        let mut quant = Vec::with_capacity(ds.scans.len());
        let mut spectra = Vec::with_capacity(ds.scans.len());
        for ((_, values), (scan, water_fid)) in
            series.rows.into_iter().zip(ds.scans.iter().zip(&water))
        {
            let spec = Spectrum::new(values, cfg.axis)?;
            let off = match kind {
                PipelineKind::FullAverage => off_spectrum(&scan.off_transients, &cfg.axis, lb)?,
                _ => {
                    let (_, off) = group_slices(scan, series.group)?;
                    off_spectrum(off, &cfg.axis, lb)?
                }
            };
            let q = quantify(&spec, &off, water_fid)?;
            rows.push(MetricRow {
                scan_id: scan.scan_id,
                mse: mse_windowed(&spec, &scan.target, w)?,
                snr: snr_gaba(&spec, w)?,
                fwhm_ppm: fwhm_gaba(&spec, w)?,
                shape_score: shape_score(&spec, &scan.target, w)?,
                fit_error_percent: q.gaba_water_error_percent,
            });
            quant.push((scan.scan_id, q));
            spectra.push(spec.values);
        }
        let summary = summarize_metrics(&rows);
        let quant_summary = summarize_quant(&quant);
        evals.push(PipelineEvaluation {
            kind,
            group: series.group,
            spectra,
            rows,
            quant,
            summary,
            quant_summary,
        });
    }

    // Paired comparison of each pipeline's GABA+/water against the full
    // average, when the full average was evaluated.
    let mut wilcoxon = Vec::new();
    if let Some(full) = evals.iter().find(|e| e.kind == PipelineKind::FullAverage) {
        let full_vals: Vec<f64> = full.quant.iter().map(|(_, q)| q.gaba_water).collect();
        for ev in &evals {
            if ev.kind == PipelineKind::FullAverage {
                continue;
            }
            let vals: Vec<f64> = ev.quant.iter().map(|(_, q)| q.gaba_water).collect();
            let entry = match wilcoxon_signed_rank(&vals, &full_vals) {
                Ok(r) => Some(r),
                Err(Error::InsufficientPairs { .. }) => None,
                Err(e) => return Err(e),
            };
            wilcoxon.push((ev.kind, entry));
        }
    }

    let echo = cfg.echo_comment_block();

    let mut metrics_text = echo.clone();
    metrics_text.push_str("scan_id,pipeline,mse,snr,fwhm_ppm,shape_score,fit_error_percent\n");
    for ev in &evals {
        for r in &ev.rows {
            let _ = writeln!(
                metrics_text,
                "{},{},{},{},{},{},{}",
                r.scan_id,
                ev.kind.name(),
                r.mse,
                r.snr,
                r.fwhm_ppm,
                r.shape_score,
                r.fit_error_percent
            );
        }
    }
    let metrics_csv = out_dir.join("metrics.csv");
    write_text(&metrics_csv, &metrics_text)?;

    let mut quant_text = echo.clone();
    quant_text.push_str(
        "scan_id,pipeline,gaba_water,gaba_water_error_percent,gaba_cr,gaba_cr_error_percent,\
         glx_water,glx_water_error_percent\n",
    );
    for ev in &evals {
        for (id, q) in &ev.quant {
            let _ = writeln!(
                quant_text,
                "{},{},{},{},{},{},{},{}",
                id,
                ev.kind.name(),
                q.gaba_water,
                q.gaba_water_error_percent,
                q.gaba_cr,
                q.gaba_cr_error_percent,
                q.glx_water,
                q.glx_water_error_percent
            );
        }
    }
    let quantification_csv = out_dir.join("quantification.csv");
    write_text(&quantification_csv, &quant_text)?;

    let mut pipelines_json = serde_json::Map::new();
    for ev in &evals {
        pipelines_json.insert(
            ev.kind.name().to_string(),
            json!({
                "group": ev.group,
                "metrics": ev.summary,
                "quantification": ev.quant_summary,
            }),
        );
    }
    let mut wilcoxon_json = serde_json::Map::new();
    for (kind, entry) in &wilcoxon {
        let value = match entry {
            Some(r) => json!({
                "statistic": r.statistic,
                "p_value": r.p_value,
                "n_effective": r.n_effective,
            }),
            None => json!({
                "note": "fewer than five nonzero paired differences against the full average",
            }),
        };
        wilcoxon_json.insert(kind.name().to_string(), value);
    }
    let root = json!({
        "split": split.name(),
        "n_scans": ds.scans.len(),
        "pipelines": pipelines_json,
        "wilcoxon_gaba_water_vs_full": wilcoxon_json,
    });
    let summary_json = out_dir.join("summary.json");
    let rendered = serde_json::to_string_pretty(&root)
        .map_err(|e| Error::Format(format!("summary serialization: {e}")))?;
    write_text(&summary_json, &(rendered + "\n"))?;

    let (mse_start, mse_end) = cfg.axis.index_range(w.mse_lo_ppm, w.mse_hi_ppm)?;
    let mut overlay_text = echo.clone();
    overlay_text.push_str("scan_id,ppm,target");
    for ev in &evals {
        let _ = write!(overlay_text, ",{}", ev.kind.name());
    }
    overlay_text.push('\n');
    for (scan_idx, scan) in ds.scans.iter().enumerate() {
        for i in mse_start..=mse_end {
            let _ = write!(
                overlay_text,
                "{},{},{}",
                scan.scan_id,
                cfg.axis.ppm_at(i),
                scan.target.values[i]
            );
            for ev in &evals {
                let _ = write!(overlay_text, ",{}", ev.spectra[scan_idx][i]);
            }
            overlay_text.push('\n');
        }
    }
    let overlay_csv = out_dir.join("overlay.csv");
    write_text(&overlay_csv, &overlay_text)?;

    let svg_dir = if svg {
        let dir = out_dir.join("svg");
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let ppm: Vec<f64> = (mse_start..=mse_end).map(|i| cfg.axis.ppm_at(i)).collect();
        for (scan_idx, scan) in ds.scans.iter().enumerate() {
            let mut series: Vec<(&str, &[f64])> =
                vec![("target", &scan.target.values[mse_start..=mse_end])];
            for ev in &evals {
                series.push((ev.kind.name(), &ev.spectra[scan_idx][mse_start..=mse_end]));
            }
            let path = dir.join(format!("scan_{:04}.svg", scan.scan_id));
            write_scan_svg(&path, &ppm, &series)?;
        }
        Some(dir)
    } else {
        None
    };

    Ok(EvaluateReport {
        pipelines: evals,
        wilcoxon_gaba_water: wilcoxon,
        metrics_csv,
        quantification_csv,
        summary_json,
        overlay_csv,
        svg_dir,
    })
}

/// Per-group metric summary from [`cmd_compare_groups`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroupSummary {
    pub group: usize,
    pub mse: MeanStd,
    pub snr: MeanStd,
    pub fwhm_ppm: MeanStd,
    pub shape_score: MeanStd,
}

/// Result of [`cmd_compare_groups`]: the table written and one summary
/// per quarter group.
#[derive(Debug, Clone)]
pub struct GroupReport {
    pub csv_path: PathBuf,
    pub groups: Vec<GroupSummary>,
}

/// Runs one pipeline over each quarter group of every scan in a split
/// and writes per-scan metrics to `groups.csv`. Consistent behaviour
/// across acquisition sub-signals shows as a small spread of the group
/// means.
pub fn cmd_compare_groups(
    cfg: &PipelineConfig,
    kind: PipelineKind,
    split: SplitName,
) -> Result<GroupReport> {
    cfg.validate()?;
    let ds = load_split(cfg, split)?;
    if ds.scans.is_empty() {
        return Err(Error::InvalidArg(format!("{} split holds no scans", split.name())));
    }
    let w = &cfg.metrics;

    let mut text = format!("# pipeline = {}\n", kind.name());
    text.push_str(&cfg.echo_comment_block());
    text.push_str("group,scan_id,mse,snr,fwhm_ppm,shape_score\n");
    let mut groups = Vec::with_capacity(4);
    for group in 1..=4 {
        let recon = Reconstructor::new(cfg, kind, group)?;
        let mut rows = Vec::with_capacity(ds.scans.len());
        for scan in &ds.scans {
            let spec = recon.reconstruct(scan, &cfg.axis)?;
            let row = MetricRow {
                scan_id: scan.scan_id,
                mse: mse_windowed(&spec, &scan.target, w)?,
                snr: snr_gaba(&spec, w)?,
                fwhm_ppm: fwhm_gaba(&spec, w)?,
                shape_score: shape_score(&spec, &scan.target, w)?,
                fit_error_percent: 0.0,
            };
            let _ = writeln!(
                text,
                "{},{},{},{},{},{}",
                group, row.scan_id, row.mse, row.snr, row.fwhm_ppm, row.shape_score
            );
            rows.push(row);
        }
        let s = summarize_metrics(&rows);
        groups.push(GroupSummary {
            group,
            mse: s.mse,
            snr: s.snr,
            fwhm_ppm: s.fwhm_ppm,
            shape_score: s.shape_score,
        });
    }

    fs::create_dir_all(&cfg.paths.out_dir).map_err(|e| Error::io(&cfg.paths.out_dir, e))?;
    let csv_path = cfg.paths.out_dir.join("groups.csv");
    write_text(&csv_path, &text)?;
    Ok(GroupReport { csv_path, groups })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use crate::simulator::{synthesize_scan, CorruptionParams};
    use tempfile::tempdir;

    fn tiny_model() -> ModelConfig {
        ModelConfig {
            image_size: 224,
            patch_size: 32,
            embed_dim: 16,
            depth: 1,
            n_heads: 2,
            mlp_ratio: 2,
            head_dims: [32, 64, 512],
            output_points: 512,
        }
    }

    /// Noiseless, uncorrupted five-scan setup on a 512-point axis; splits
    /// to [2, 1, 2], so the test split holds scans 3 and 4.
    fn tiny_cfg(dir: &Path) -> PipelineConfig {
        let mut cfg = PipelineConfig::default();
        cfg.seed = 11;
        cfg.split = (0.4, 0.2, 0.4);
        cfg.axis = PpmAxis::new(512, 4.7, 2000.0, 127.7e6).unwrap();
        cfg.simulator.n_transients = 8;
        cfg.simulator.fid_points = 256;
        cfg.simulator.noise_std = 0.0;
        cfg.corruption = CorruptionParams::zero(0);
        cfg.model = tiny_model();
        cfg.train.window = 4;
        cfg.train.batch_size = 4;
        cfg.train.epochs = 1;
        cfg.paths.data_dir = dir.join("data");
        cfg.paths.params = dir.join("model.vitp1");
        cfg.paths.out_dir = dir.join("out");
        cfg.validate().unwrap();
        cfg
    }

    #[test]
    fn averaging_a_noiseless_scan_reproduces_the_stored_target() {
        let dir = tempdir().unwrap();
        let cfg = tiny_cfg(dir.path());
        let scan = synthesize_scan(&cfg.basis, &cfg.axis, &cfg.simulator, 0, 5).unwrap();
        let recon = average_reconstruction(
            &scan.on_transients,
            &scan.off_transients,
            &cfg.axis,
            cfg.simulator.target_apodize_hz,
        )
        .unwrap();
        let max_diff = recon
            .values
            .iter()
            .zip(&scan.target.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(max_diff < 1e-12, "max deviation {max_diff}");
    }

    #[test]
    fn pipeline_and_split_names_parse_and_print() {
        for kind in PipelineKind::ALL {
            assert_eq!(PipelineKind::parse(kind.name()).unwrap(), kind);
        }
        assert!(matches!(PipelineKind::parse("bogus"), Err(Error::InvalidArg(_))));
        assert_eq!(SplitName::parse("test").unwrap().file_name(), "test.mrsd");
        assert!(SplitName::parse("holdout").is_err());
    }

    #[test]
    fn reconstruction_files_roundtrip_and_repeat_byte_identically() {
        let dir = tempdir().unwrap();
        let cfg = tiny_cfg(dir.path());
        let summary = cmd_simulate(&cfg, 5).unwrap();
        assert_eq!(summary.counts, [2, 1, 2]);
        assert!(matches!(
            Reconstructor::new(&cfg, PipelineKind::QuarterAverage, 0),
            Err(Error::InvalidArg(_))
        ));

        let report =
            cmd_reconstruct(&cfg, PipelineKind::QuarterAverage, SplitName::Test, 2).unwrap();
        assert_eq!(report.n_scans, 2);
        let first = fs::read(&report.csv_path).unwrap();
        let series = read_recon_csv(&report.csv_path, &cfg.axis).unwrap();
        assert_eq!(series.pipeline, "quarter");
        assert_eq!(series.group, 2);
        let ids: Vec<u32> = series.rows.iter().map(|(id, _)| *id).collect();
        assert_eq!(ids, vec![3, 4]);

        let ds = load_split(&cfg, SplitName::Test).unwrap();
        let recon = Reconstructor::new(&cfg, PipelineKind::QuarterAverage, 2).unwrap();
        let direct = recon.reconstruct(&ds.scans[0], &cfg.axis).unwrap();
        assert_eq!(series.rows[0].1, direct.values);

        cmd_reconstruct(&cfg, PipelineKind::QuarterAverage, SplitName::Test, 2).unwrap();
        assert_eq!(fs::read(&report.csv_path).unwrap(), first);
    }

    #[test]
    fn reconstruction_file_without_pipeline_tag_is_rejected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("recon_broken.csv");
        fs::write(&path, "# group = 1\nscan_id,1.0,2.0\n0,0.5,0.5\n").unwrap();
        let axis = PpmAxis::new(2, 4.7, 2000.0, 127.7e6).unwrap();
        assert!(matches!(read_recon_csv(&path, &axis), Err(Error::Format(_))));
    }

    #[test]
    fn evaluation_summarizes_pipelines_and_nulls_undersized_signed_rank() {
        let dir = tempdir().unwrap();
        let cfg = tiny_cfg(dir.path());
        cmd_simulate(&cfg, 5).unwrap();
        cmd_reconstruct(&cfg, PipelineKind::FullAverage, SplitName::Test, 1).unwrap();
        cmd_reconstruct(&cfg, PipelineKind::QuarterAverage, SplitName::Test, 1).unwrap();
        let kinds = [PipelineKind::FullAverage, PipelineKind::QuarterAverage];
        let report = cmd_evaluate(&cfg, &kinds, SplitName::Test, true).unwrap();

        for ev in &report.pipelines {
            assert!(ev.summary.mse.mean < 1e-20, "{} mse {}", ev.kind.name(), ev.summary.mse.mean);
            assert!(ev.summary.shape_score.mean > 1.0 - 1e-9);
            assert!(ev.summary.fit_error_percent.mean >= 0.0);
            assert!(ev.quant_summary.gaba_water.mean > 0.0);
        }
        assert_eq!(report.wilcoxon_gaba_water.len(), 1);
        assert_eq!(report.wilcoxon_gaba_water[0].0, PipelineKind::QuarterAverage);
        assert!(report.wilcoxon_gaba_water[0].1.is_none());

        let summary = fs::read_to_string(&report.summary_json).unwrap();
        assert!(summary.contains("\"note\""));
        assert!(report.quantification_csv.exists() && report.overlay_csv.exists());
        let svg_dir = report.svg_dir.as_ref().unwrap();
        assert!(svg_dir.join("scan_0003.svg").exists());

        let metrics = fs::read_to_string(&report.metrics_csv).unwrap();
        let data_rows = metrics.lines().filter(|l| !l.starts_with('#')).count();
        assert_eq!(data_rows, 1 + 4);

        let first = fs::read(&report.metrics_csv).unwrap();
        cmd_evaluate(&cfg, &kinds, SplitName::Test, false).unwrap();
        assert_eq!(fs::read(&report.metrics_csv).unwrap(), first);
    }

    #[test]
    fn model_reconstruction_is_deterministic_and_unit_normalized() {
        let dir = tempdir().unwrap();
        let cfg = tiny_cfg(dir.path());
        cmd_simulate(&cfg, 5).unwrap();
        let vit = Vit::new(cfg.model).unwrap();
        let params = ParamBuf::<f32>::init(&vit.layout, 3);
        export_params(&cfg.paths.params, &vit, &params, 0).unwrap();

        let ds = load_split(&cfg, SplitName::Test).unwrap();
        let recon = Reconstructor::new(&cfg, PipelineKind::VitModel, 1).unwrap();
        let a = recon.reconstruct(&ds.scans[0], &cfg.axis).unwrap();
        let b = recon.reconstruct(&ds.scans[0], &cfg.axis).unwrap();
        assert_eq!(a.values, b.values);
        assert_eq!(a.values.len(), 512);
        let max_abs = a.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert_eq!(max_abs, 1.0);
    }

    #[test]
    fn identical_quarters_give_zero_group_spread() {
        let dir = tempdir().unwrap();
        let cfg = tiny_cfg(dir.path());
        cmd_simulate(&cfg, 5).unwrap();
        let report =
            cmd_compare_groups(&cfg, PipelineKind::QuarterAverage, SplitName::Test).unwrap();
        assert_eq!(report.groups.len(), 4);
        let shapes: Vec<f64> = report.groups.iter().map(|g| g.shape_score.mean).collect();
        let spread = shapes.iter().fold(f64::NEG_INFINITY, |m, v| m.max(*v))
            - shapes.iter().fold(f64::INFINITY, |m, v| m.min(*v));
        assert_eq!(spread, 0.0);
        let text = fs::read_to_string(&report.csv_path).unwrap();
        let rows = text.lines().filter(|l| !l.starts_with('#')).count();
        assert_eq!(rows, 1 + 4 * 2);
    }
}
