//! Command-line front end for the edited-spectroscopy pipeline.
//!
//! Five verbs cover the whole loop: `simulate` writes a synthetic
//! dataset, `train` fits the reconstruction model, `reconstruct` emits
//! difference spectra for one pipeline, `evaluate` scores reconstruction
//! files against the stored targets, and `compare-groups` scores one
//! pipeline on each quarter of the transients.
//!
//! The config file comes from `--config`, falling back to the
//! `EDMRS_CONFIG` environment variable, then to built-in defaults.
//! Exit codes: 0 success, 2 usage error, 3 data error, 4 numerical
//! failure.

use std::env;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use edmrs::config::{PipelineConfig, Preset, CONFIG_ENV_VAR};
use edmrs::error::{exit_code, Error, Result};
use edmrs::pipeline::{
    cmd_compare_groups, cmd_evaluate, cmd_reconstruct, cmd_simulate, cmd_train, PipelineKind,
    SplitName,
};

#[derive(Parser)]
#[command(
    name = "edmrs",
    version,
    about = "Edited MRS reconstruction: simulate, train, reconstruct, evaluate"
)]
struct Cli {
    /// Config file; defaults to $EDMRS_CONFIG, then to built-in defaults.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Named recipe ('desk' or 'paper') overriding the model size and the
    /// optimizer schedule from the config.
    #[arg(long, global = true, value_name = "NAME")]
    preset: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset and write its three split files.
    Simulate(SimulateArgs),
    /// Train the reconstruction model on the train split.
    Train(TrainArgs),
    /// Reconstruct one split's difference spectra with one pipeline.
    Reconstruct(ReconstructArgs),
    /// Score reconstruction files and write metric tables.
    Evaluate(EvaluateArgs),
    /// Score one pipeline on each quarter group of the transients.
    CompareGroups(CompareGroupsArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// Number of scans to generate.
    #[arg(long)]
    scans: usize,
    /// Train,val,test scan counts; must sum to --scans. Overrides the
    /// split fractions from the config.
    #[arg(long, value_name = "TRAIN,VAL,TEST")]
    split: Option<String>,
    /// Dataset seed, overriding the config.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct TrainArgs {
    /// Continue from the existing parameter file, keeping its optimizer
    /// step count.
    #[arg(long)]
    resume: bool,
}

#[derive(Args)]
struct ReconstructArgs {
    /// Pipeline to run: vit, quarter, or full.
    pipeline: String,
    /// Dataset split to reconstruct.
    #[arg(long, default_value = "test")]
    split: String,
    /// Quarter group 1-4 feeding the model and quarter pipelines; the
    /// full average ignores it.
    #[arg(long, default_value_t = 1)]
    group: usize,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Pipelines to score; their reconstruction files must exist.
    #[arg(long, value_delimiter = ',', default_value = "vit,quarter,full")]
    pipelines: Vec<String>,
    /// Dataset split the reconstructions belong to.
    #[arg(long, default_value = "test")]
    split: String,
    /// Also write one SVG overlay image per scan.
    #[arg(long)]
    svg: bool,
}

#[derive(Args)]
struct CompareGroupsArgs {
    /// Pipeline to run: vit, quarter, or full.
    pipeline: String,
    /// Dataset split to score.
    #[arg(long, default_value = "test")]
    split: String,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err) as u8)
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = load_config(cli.config.as_deref())?;
    if let Some(name) = &cli.preset {
        Preset::parse(name)?.apply(&mut cfg);
    }
    match cli.command {
        Command::Simulate(a) => simulate(cfg, a),
        Command::Train(a) => train(cfg, a),
        Command::Reconstruct(a) => reconstruct(cfg, a),
        Command::Evaluate(a) => evaluate(cfg, a),
        Command::CompareGroups(a) => compare_groups(cfg, a),
    }
}

fn load_config(flag: Option<&Path>) -> Result<PipelineConfig> {
    let env_path = env::var_os(CONFIG_ENV_VAR).map(PathBuf::from);
    match flag.map(Path::to_path_buf).or(env_path) {
        Some(path) => PipelineConfig::load(&path),
        None => Ok(PipelineConfig::default()),
    }
}

fn parse_split_counts(text: &str) -> Result<[usize; 3]> {
    let parts: Vec<&str> = text.split(',').collect();
    if parts.len() != 3 {
        return Err(Error::InvalidArg(format!(
            "--split wants three comma-separated counts, got '{text}'"
        )));
    }
    let mut counts = [0usize; 3];
    for (slot, part) in counts.iter_mut().zip(&parts) {
        *slot = part.trim().parse().map_err(|_| {
            Error::InvalidArg(format!("--split count '{part}' is not a whole number"))
        })?;
    }
    Ok(counts)
}

fn simulate(mut cfg: PipelineConfig, a: SimulateArgs) -> Result<()> {
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    if let Some(spec) = &a.split {
        let counts = parse_split_counts(spec)?;
        let total: usize = counts.iter().sum();
        if total == 0 {
            return Err(Error::InvalidArg("--split counts sum to zero".into()));
        }
        if total != a.scans {
            return Err(Error::InvalidArg(format!(
                "split counts {}+{}+{} = {total} do not sum to --scans {}",
                counts[0], counts[1], counts[2], a.scans
            )));
        }
        cfg.split = (
            counts[0] as f64 / total as f64,
            counts[1] as f64 / total as f64,
            counts[2] as f64 / total as f64,
        );
    }
    let summary = cmd_simulate(&cfg, a.scans)?;
    for ((name, count), path) in ["train", "val", "test"]
        .iter()
        .zip(summary.counts)
        .zip(&summary.paths)
    {
        println!("{name}: {count} scans -> {}", path.display());
    }
    Ok(())
}

fn train(cfg: PipelineConfig, a: TrainArgs) -> Result<()> {
    let report = cmd_train(&cfg, a.resume, |row| {
        println!(
            "epoch {:>3}: train {:.6} val {:.6} ({:.1}s)",
            row.epoch, row.train_loss, row.val_loss, row.wall_seconds
        );
    })?;
    println!("optimizer steps: {}", report.outcome.adam_steps);
    println!("parameters -> {}", report.params_path.display());
    println!("loss log -> {}", report.loss_csv.display());
    Ok(())
}

fn reconstruct(cfg: PipelineConfig, a: ReconstructArgs) -> Result<()> {
    let kind = PipelineKind::parse(&a.pipeline)?;
    let split = SplitName::parse(&a.split)?;
    let report = cmd_reconstruct(&cfg, kind, split, a.group)?;
    println!("{} scans -> {}", report.n_scans, report.csv_path.display());
    Ok(())
}

fn evaluate(cfg: PipelineConfig, a: EvaluateArgs) -> Result<()> {
    let kinds: Vec<PipelineKind> = a
        .pipelines
        .iter()
        .map(|s| PipelineKind::parse(s))
        .collect::<Result<_>>()?;
    let split = SplitName::parse(&a.split)?;
    let report = cmd_evaluate(&cfg, &kinds, split, a.svg)?;
    for ev in &report.pipelines {
        let s = &ev.summary;
        println!(
            "{:>8}: mse {:.3e}±{:.1e}  snr {:.1}±{:.1}  fwhm {:.4}±{:.4} ppm  shape {:.3}±{:.3}  fit err {:.2}±{:.2} %",
            ev.kind.name(),
            s.mse.mean,
            s.mse.std,
            s.snr.mean,
            s.snr.std,
            s.fwhm_ppm.mean,
            s.fwhm_ppm.std,
            s.shape_score.mean,
            s.shape_score.std,
            s.fit_error_percent.mean,
            s.fit_error_percent.std,
        );
    }
    for (kind, res) in &report.wilcoxon_gaba_water {
        match res {
            Some(w) => println!(
                "signed-rank {} vs full (GABA+/water): W = {}, p = {:.4}, n = {}",
                kind.name(),
                w.statistic,
                w.p_value,
                w.n_effective
            ),
            None => println!(
                "signed-rank {} vs full (GABA+/water): fewer than five nonzero paired differences",
                kind.name()
            ),
        }
    }
    println!("metrics -> {}", report.metrics_csv.display());
    println!("quantification -> {}", report.quantification_csv.display());
    println!("summary -> {}", report.summary_json.display());
    println!("overlays -> {}", report.overlay_csv.display());
    if let Some(dir) = &report.svg_dir {
        println!("images -> {}", dir.display());
    }
    Ok(())
}

fn compare_groups(cfg: PipelineConfig, a: CompareGroupsArgs) -> Result<()> {
    let kind = PipelineKind::parse(&a.pipeline)?;
    let split = SplitName::parse(&a.split)?;
    let report = cmd_compare_groups(&cfg, kind, split)?;
    for g in &report.groups {
        println!(
            "group {}: mse {:.3e}  snr {:.1}  fwhm {:.4} ppm  shape {:.3}",
            g.group, g.mse.mean, g.snr.mean, g.fwhm_ppm.mean, g.shape_score.mean
        );
    }
    println!("table -> {}", report.csv_path.display());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_counts_parse_and_reject_malformed_text() {
        assert_eq!(parse_split_counts("84,24,36").unwrap(), [84, 24, 36]);
        assert_eq!(parse_split_counts(" 3, 1 ,2").unwrap(), [3, 1, 2]);
        assert!(parse_split_counts("84,24").is_err());
        assert!(parse_split_counts("a,b,c").is_err());
        assert!(parse_split_counts("1,2,3,4").is_err());
    }

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
