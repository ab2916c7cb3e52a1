//! Desk-scale calibration driver: timings and metric headroom for the
//! end-to-end run. Temporary tooling, not part of the test suite.

use std::time::Instant;

use edmrs::config::{PipelineConfig, Preset};
use edmrs::pipeline::{
    cmd_compare_groups, cmd_evaluate, cmd_reconstruct, cmd_simulate, cmd_train, PipelineKind,
    SplitName,
};

fn main() {
    let dir = std::env::temp_dir().join("desk_cal");
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();

    let knob = |name: &str, default: f64| -> f64 {
        std::env::var(name).ok().and_then(|v| v.parse().ok()).unwrap_or(default)
    };

    let mut cfg = PipelineConfig::default();
    Preset::Desk.apply(&mut cfg);
    cfg.seed = 20260819;
    cfg.split = (0.8, 0.0, 0.2);
    cfg.simulator.fid_points = knob("FID", 1024.0) as usize;
    cfg.simulator.noise_std = knob("NOISE", 1.0);
    cfg.train.epochs = knob("EPOCHS", 8.0) as usize;
    cfg.train.window_stride = knob("STRIDE", 8.0) as usize;
    cfg.train.learning_rate = knob("LR", 1e-3);
    cfg.train.batch_size = knob("BATCH", 16.0) as usize;
    cfg.model.embed_dim = knob("EMBED", 64.0) as usize;
    cfg.model.depth = knob("DEPTH", 2.0) as usize;
    cfg.paths.data_dir = dir.join("data");
    cfg.paths.params = dir.join("model.vitp1");
    cfg.paths.out_dir = dir.join("out");
    cfg.validate().unwrap();
    println!(
        "model: embed {} depth {} heads {}; train: lr {} batch {} epochs {} stride {}",
        cfg.model.embed_dim,
        cfg.model.depth,
        cfg.model.n_heads,
        cfg.train.learning_rate,
        cfg.train.batch_size,
        cfg.train.epochs,
        cfg.train.window_stride
    );

    let t0 = Instant::now();
    let sim = cmd_simulate(&cfg, 80).unwrap();
    println!("simulate 80 scans: {:.1}s, counts {:?}", t0.elapsed().as_secs_f64(), sim.counts);

    let t0 = Instant::now();
    let report = cmd_train(&cfg, false, |row| {
        println!(
            "  epoch {:>2}: train {:.5} ({:.1}s)",
            row.epoch, row.train_loss, row.wall_seconds
        );
    })
    .unwrap();
    let train_secs = t0.elapsed().as_secs_f64();
    println!(
        "train: {:.1}s total, {} adam steps, initial val {:.5}",
        train_secs, report.outcome.adam_steps, report.outcome.initial_val_loss
    );

    let t0 = Instant::now();
    for kind in PipelineKind::ALL {
        cmd_reconstruct(&cfg, kind, SplitName::Test, 1).unwrap();
    }
    println!("reconstruct x3: {:.1}s", t0.elapsed().as_secs_f64());

    let t0 = Instant::now();
    match cmd_evaluate(&cfg, &PipelineKind::ALL, SplitName::Test, false) {
        Ok(ev) => {
            println!("evaluate: {:.1}s", t0.elapsed().as_secs_f64());
            for p in &ev.pipelines {
                let s = &p.summary;
                println!(
                    "  {:>8}: mse {:.5}+-{:.5} snr {:.1}+-{:.1} fwhm {:.4} shape {:.4}+-{:.4} fit% {:.2}",
                    p.kind.name(),
                    s.mse.mean,
                    s.mse.std,
                    s.snr.mean,
                    s.snr.std,
                    s.fwhm_ppm.mean,
                    s.shape_score.mean,
                    s.shape_score.std,
                    s.fit_error_percent.mean
                );
                println!(
                    "            quant gaba/water {:.4}+-{:.4} gaba/cr {:.4} glx/water {:.4}",
                    p.quant_summary.gaba_water.mean,
                    p.quant_summary.gaba_water.std,
                    p.quant_summary.gaba_cr.mean,
                    p.quant_summary.glx_water.mean
                );
            }
            for (kind, w) in &ev.wilcoxon_gaba_water {
                match w {
                    Some(w) => println!(
                        "  wilcoxon {} vs full: W {} p {:.4} n {}",
                        kind.name(),
                        w.statistic,
                        w.p_value,
                        w.n_effective
                    ),
                    None => println!("  wilcoxon {} vs full: degenerate", kind.name()),
                }
            }
        }
        Err(e) => println!("evaluate FAILED: {e}"),
    }

    let t0 = Instant::now();
    match cmd_compare_groups(&cfg, PipelineKind::VitModel, SplitName::Test) {
        Ok(g) => {
            println!("compare-groups: {:.1}s", t0.elapsed().as_secs_f64());
            for s in &g.groups {
                println!(
                    "  group {}: mse {:.5} snr {:.1} fwhm {:.4} shape {:.4}",
                    s.group, s.mse.mean, s.snr.mean, s.fwhm_ppm.mean, s.shape_score.mean
                );
            }
            let shapes: Vec<f64> = g.groups.iter().map(|s| s.shape_score.mean).collect();
            let spread = shapes.iter().cloned().fold(f64::MIN, f64::max)
                - shapes.iter().cloned().fold(f64::MAX, f64::min);
            println!("  shape spread: {:.4}", spread);
        }
        Err(e) => println!("compare-groups FAILED: {e}"),
    }

    // Per-group signed-rank of the model's GABA+/water against the full
    // average, the criterion-9 statistic.
    use edmrs::pipeline::read_recon_csv;
    let full_csv = cfg.paths.out_dir.join("recon_full.csv");
    let _ = full_csv;
    for group in 1..=4 {
        let mut gcfg = cfg.clone();
        gcfg.paths.out_dir = dir.join(format!("out_g{group}"));
        let t0 = Instant::now();
        cmd_reconstruct(&gcfg, PipelineKind::VitModel, SplitName::Test, group).unwrap();
        cmd_reconstruct(&gcfg, PipelineKind::FullAverage, SplitName::Test, group).unwrap();
        match cmd_evaluate(
            &gcfg,
            &[PipelineKind::VitModel, PipelineKind::FullAverage],
            SplitName::Test,
            false,
        ) {
            Ok(ev) => {
                for (kind, w) in &ev.wilcoxon_gaba_water {
                    match w {
                        Some(w) => println!(
                            "  group {group} wilcoxon {} vs full: W {} p {:.4} ({:.1}s)",
                            kind.name(),
                            w.statistic,
                            w.p_value,
                            t0.elapsed().as_secs_f64()
                        ),
                        None => println!("  group {group} wilcoxon degenerate"),
                    }
                }
            }
            Err(e) => println!("  group {group} evaluate FAILED: {e}"),
        }
    }
}
