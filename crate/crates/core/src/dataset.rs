//! The MRSD1 binary dataset format and deterministic dataset generation.
//!
//! Layout, little-endian throughout:
//!
//! ```text
//! header:  magic "MRSD" | version u32 | n_scans u32 | n_transients u32
//!          | n_fid_points u32 | target_points u32 | dwell_time f64
//!          | transmitter_hz f64 | center_ppm f64
//!          | rng name (u32 length + utf-8 bytes) | seed u64
//! scan:    scan_id u32
//!          | corruption (amp_base, amp_scan_var, freq_base_hz,
//!            freq_scan_var_hz, phase_base_deg, phase_scan_var_deg) 6xf64
//!          | corruption rng_seed u64
//!          | ON block  (n_transients x n_fid_points x (re f64, im f64))
//!          | OFF block (same shape)
//!          | target (target_points x f64)
//! ```
//!
//! The recorded generator name and seed pin the corruption and synthesis
//! streams, so a dataset is reproducible from its header alone given the
//! same basis configuration.

use num_complex::Complex64;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use crate::bytes::{read_f64, read_f64_vec, read_u32, read_u64, write_f64, write_u32, write_u64};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, GENERATOR_NAME};
use crate::signal::{ComplexFid, EditLabel, PpmAxis, Spectrum};
use crate::simulator::{
    apply_corruption, synthesize_scan, CorruptionParams, MetaboliteBasis, ScanRecord,
    SimulatorConfig,
};

const MAGIC: &[u8; 4] = b"MRSD";
const VERSION: u32 = 1;

/// Dataset-wide metadata stored in the file header.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetHeader {
    pub n_scans: u32,
    /// Transients per sub-signal; the scan holds twice this.
    pub n_transients: u32,
    pub n_fid_points: u32,
    /// Axis of the stored targets; also carries dwell time (1/sweep) and
    /// transmitter frequency for the transients.
    pub axis: PpmAxis,
    pub rng_name: String,
    pub seed: u64,
}

impl DatasetHeader {
    fn scan_byte_len(&self) -> u64 {
        let samples = 2 * self.n_transients as u64 * self.n_fid_points as u64 * 16;
        4 + 6 * 8 + 8 + samples + self.axis.n_points as u64 * 8
    }

    fn header_byte_len(&self) -> u64 {
        // magic + 5 u32 fields + 3 f64 fields + name length + name + seed.
        4 + 5 * 4 + 3 * 8 + 4 + self.rng_name.len() as u64 + 8
    }
}

/// An in-memory dataset: header plus every scan.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub header: DatasetHeader,
    pub scans: Vec<ScanRecord>,
}

/// Incremental MRSD1 writer; scans are appended one at a time so only one
/// scan is ever held in memory during generation.
pub struct MrsdWriter {
    path: PathBuf,
    out: BufWriter<File>,
    header: DatasetHeader,
    written: u32,
}

impl MrsdWriter {
    pub fn create(path: &Path, header: DatasetHeader) -> Result<Self> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        let io = |e| Error::io(path, e);
        out.write_all(MAGIC).map_err(io)?;
        write_u32(&mut out, VERSION).map_err(io)?;
        write_u32(&mut out, header.n_scans).map_err(io)?;
        write_u32(&mut out, header.n_transients).map_err(io)?;
        write_u32(&mut out, header.n_fid_points).map_err(io)?;
        write_u32(&mut out, header.axis.n_points as u32).map_err(io)?;
        write_f64(&mut out, 1.0 / header.axis.sweep_width_hz).map_err(io)?;
        write_f64(&mut out, header.axis.transmitter_hz).map_err(io)?;
        write_f64(&mut out, header.axis.center_ppm).map_err(io)?;
        write_u32(&mut out, header.rng_name.len() as u32).map_err(io)?;
        out.write_all(header.rng_name.as_bytes()).map_err(io)?;
        write_u64(&mut out, header.seed).map_err(io)?;
        Ok(MrsdWriter { path: path.to_path_buf(), out, header, written: 0 })
    }

    pub fn write_scan(&mut self, scan: &ScanRecord) -> Result<()> {
        let h = &self.header;
        if scan.on_transients.len() != h.n_transients as usize
            || scan.off_transients.len() != h.n_transients as usize
        {
            return Err(Error::LengthMismatch {
                context: "scan transient count vs dataset header",
                left: scan.on_transients.len(),
                right: h.n_transients as usize,
            });
        }
        if scan.target.values.len() != h.axis.n_points {
            return Err(Error::LengthMismatch {
                context: "scan target length vs dataset header",
                left: scan.target.values.len(),
                right: h.axis.n_points,
            });
        }
        let path = self.path.clone();
        let io = move |e| Error::io(&path, e);
        let out = &mut self.out;
        write_u32(out, scan.scan_id).map_err(&io)?;
        let c = &scan.corruption;
        for v in [
            c.amp_base,
            c.amp_scan_var,
            c.freq_base_hz,
            c.freq_scan_var_hz,
            c.phase_base_deg,
            c.phase_scan_var_deg,
        ] {
            write_f64(out, v).map_err(&io)?;
        }
        write_u64(out, c.rng_seed).map_err(&io)?;
        for block in [&scan.on_transients, &scan.off_transients] {
            for fid in block.iter() {
                if fid.len() != h.n_fid_points as usize {
                    return Err(Error::LengthMismatch {
                        context: "transient length vs dataset header",
                        left: fid.len(),
                        right: h.n_fid_points as usize,
                    });
                }
                for s in &fid.samples {
                    write_f64(out, s.re).map_err(&io)?;
                    write_f64(out, s.im).map_err(&io)?;
                }
            }
        }
        for v in &scan.target.values {
            write_f64(out, *v).map_err(&io)?;
        }
        self.written += 1;
        Ok(())
    }

    /// Flushes and verifies that exactly the promised number of scans was
    /// written.
    pub fn finish(mut self) -> Result<()> {
        if self.written != self.header.n_scans {
            return Err(Error::Format(format!(
                "dataset {} declares {} scans but {} were written",
                self.path.display(),
                self.header.n_scans,
                self.written
            )));
        }
        self.out.flush().map_err(|e| Error::io(&self.path, e))
    }
}

/// Writes a complete dataset in one call.
pub fn write_dataset(path: &Path, header: &DatasetHeader, scans: &[ScanRecord]) -> Result<()> {
    let mut w = MrsdWriter::create(path, header.clone())?;
    for scan in scans {
        w.write_scan(scan)?;
    }
    w.finish()
}

/// Reads a whole MRSD1 file into memory, validating magic, version, and
/// exact file size before allocating scan buffers.
pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let file_len = file.metadata().map_err(|e| Error::io(path, e))?.len();
    let mut r = BufReader::new(file);
    let io = |e| Error::io(path, e);

    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(io)?;
    if &magic != MAGIC {
        return Err(Error::Format(format!(
            "{}: not an MRSD file (magic {:02x?})",
            path.display(),
            magic
        )));
    }
    let version = read_u32(&mut r).map_err(io)?;
    if version != VERSION {
        return Err(Error::Format(format!(
            "{}: unsupported version {version}, expected {VERSION}",
            path.display()
        )));
    }
    let n_scans = read_u32(&mut r).map_err(io)?;
    let n_transients = read_u32(&mut r).map_err(io)?;
    let n_fid_points = read_u32(&mut r).map_err(io)?;
    let target_points = read_u32(&mut r).map_err(io)?;
    let dwell_time = read_f64(&mut r).map_err(io)?;
    let transmitter_hz = read_f64(&mut r).map_err(io)?;
    let center_ppm = read_f64(&mut r).map_err(io)?;
    let name_len = read_u32(&mut r).map_err(io)? as usize;
    if name_len > 256 {
        return Err(Error::Format(format!(
            "{}: implausible generator name length {name_len}",
            path.display()
        )));
    }
    let mut name_bytes = vec![0u8; name_len];
    r.read_exact(&mut name_bytes).map_err(io)?;
    let rng_name = String::from_utf8(name_bytes)
        .map_err(|_| Error::Format(format!("{}: generator name is not utf-8", path.display())))?;
    let seed = read_u64(&mut r).map_err(io)?;

    if !(dwell_time > 0.0) || !(transmitter_hz > 0.0) {
        return Err(Error::Format(format!(
            "{}: non-positive acquisition metadata",
            path.display()
        )));
    }
    let axis = PpmAxis::new(target_points as usize, center_ppm, 1.0 / dwell_time, transmitter_hz)
        .map_err(|e| Error::Format(format!("{}: bad target axis: {e}", path.display())))?;
    let header =
        DatasetHeader { n_scans, n_transients, n_fid_points, axis, rng_name, seed };

    let expected = header.header_byte_len() + n_scans as u64 * header.scan_byte_len();
    if expected != file_len {
        return Err(Error::Format(format!(
            "{}: file is {file_len} bytes, header implies {expected}",
            path.display()
        )));
    }

    let dwell = 1.0 / header.axis.sweep_width_hz;
    let mut scans = Vec::with_capacity(n_scans as usize);
    for _ in 0..n_scans {
        let scan_id = read_u32(&mut r).map_err(io)?;
        let corruption = CorruptionParams {
            amp_base: read_f64(&mut r).map_err(io)?,
            amp_scan_var: read_f64(&mut r).map_err(io)?,
            freq_base_hz: read_f64(&mut r).map_err(io)?,
            freq_scan_var_hz: read_f64(&mut r).map_err(io)?,
            phase_base_deg: read_f64(&mut r).map_err(io)?,
            phase_scan_var_deg: read_f64(&mut r).map_err(io)?,
            rng_seed: read_u64(&mut r).map_err(io)?,
        };
        let mut read_block = |label: EditLabel| -> Result<Vec<ComplexFid>> {
            (0..n_transients)
                .map(|_| {
                    let raw = read_f64_vec(&mut r, n_fid_points as usize * 2).map_err(io)?;
                    let samples = raw
                        .chunks_exact(2)
                        .map(|c| Complex64::new(c[0], c[1]))
                        .collect();
                    ComplexFid::new(samples, dwell, transmitter_hz, Some(label))
                })
                .collect()
        };
        let on_transients = read_block(EditLabel::On)?;
        let off_transients = read_block(EditLabel::Off)?;
        let target_values = read_f64_vec(&mut r, target_points as usize).map_err(io)?;
        let target = Spectrum::new(target_values, header.axis)?;
        scans.push(ScanRecord { scan_id, on_transients, off_transients, target, corruption });
    }
    Ok(Dataset { header, scans })
}

/// Deterministic scan factory: synthesis seed and corruption levels both
/// derive from the dataset seed and the global scan index.
pub struct ScanGenerator<'a> {
    pub basis: &'a MetaboliteBasis,
    pub axis: &'a PpmAxis,
    pub sim: &'a SimulatorConfig,
    pub corruption_max: &'a CorruptionParams,
    pub dataset_seed: u64,
}

impl ScanGenerator<'_> {
    /// Synthesizes and corrupts scan `scan_id`.
    pub fn generate(&self, scan_id: u32) -> Result<ScanRecord> {
        let scan_seed = derive_seed(self.dataset_seed, scan_id as u64);
        let clean = synthesize_scan(self.basis, self.axis, self.sim, scan_id, scan_seed)?;
        let params = CorruptionParams::sample(scan_seed, self.corruption_max, 1.0);
        apply_corruption(&clean, &params)
    }
}

/// Split sizes by the largest-remainder rule, ties to the earlier split.
pub fn split_counts(n_scans: usize, fractions: (f64, f64, f64)) -> Result<[usize; 3]> {
    let f = [fractions.0, fractions.1, fractions.2];
    if f.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::InvalidArg(format!("split fractions {f:?} outside [0, 1]")));
    }
    let sum: f64 = f.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArg(format!("split fractions {f:?} sum to {sum}, not 1")));
    }
    let ideal: Vec<f64> = f.iter().map(|v| v * n_scans as f64).collect();
    let mut counts: Vec<usize> = ideal.iter().map(|v| v.floor() as usize).collect();
    let mut rest = n_scans - counts.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..3).collect();
    order.sort_by(|&a, &b| {
        let ra = ideal[a] - ideal[a].floor();
        let rb = ideal[b] - ideal[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &i in &order {
        if rest == 0 {
            break;
        }
        counts[i] += 1;
        rest -= 1;
    }
    Ok([counts[0], counts[1], counts[2]])
}

/// Names of the three split files inside a dataset directory.
pub const SPLIT_FILES: [&str; 3] = ["train.mrsd", "val.mrsd", "test.mrsd"];

/// Outcome summary of a dataset generation run.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulateSummary {
    pub counts: [usize; 3],
    pub paths: [PathBuf; 3],
}

/// Generates `n_scans` corrupted scans and writes them to
/// `train.mrsd`/`val.mrsd`/`test.mrsd` under `out_dir`, splitting by the
/// given fractions. Scan ids are global across splits, so the whole run is
/// reproducible from the single dataset seed.
pub fn simulate_dataset(
    gen: &ScanGenerator<'_>,
    n_scans: usize,
    fractions: (f64, f64, f64),
    out_dir: &Path,
) -> Result<SimulateSummary> {
    gen.sim.validate()?;
    gen.basis.validate(gen.axis)?;
    gen.corruption_max.validate()?;
    let counts = split_counts(n_scans, fractions)?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;

    let mut scan_id = 0u32;
    let mut paths = Vec::with_capacity(3);
    for (split, &count) in SPLIT_FILES.iter().zip(&counts) {
        let path = out_dir.join(split);
        let header = DatasetHeader {
            n_scans: count as u32,
            n_transients: gen.sim.n_transients as u32,
            n_fid_points: gen.sim.fid_points as u32,
            axis: *gen.axis,
            rng_name: GENERATOR_NAME.to_string(),
            seed: gen.dataset_seed,
        };
        let mut writer = MrsdWriter::create(&path, header)?;
        for _ in 0..count {
            let scan = gen.generate(scan_id)?;
            writer.write_scan(&scan)?;
            scan_id += 1;
        }
        writer.finish()?;
        paths.push(path);
    }
    Ok(SimulateSummary {
        counts,
        paths: [paths[0].clone(), paths[1].clone(), paths[2].clone()],
    })
}
