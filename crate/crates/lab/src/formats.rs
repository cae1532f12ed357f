//! On-disk formats.
//!
//! * candidate sets: CSV `x1,y1,x2,y2,objectness,p_0,..,p_{K-1}`
//! * images: `OVL1` binary, little-endian `u32` rank 3, `u32` H, W, C, then
//!   `H*W*C` `f32` values in HWC order
//! * timing samples: CSV `n,scenario,elapsed_us,repeats`
//! * fits: JSON `{alpha, t_base_us, n_break, r2}`
//! * simulator traces: CSV `id,arrival,t_wait,t_comp,t_total,timed_out`
//!
//! Floats are written with Rust's shortest round-trip formatting, so every
//! text format reads back bit-identical.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::time::Duration;

use overload_core::attack::AttackTrace;
use overload_core::costmodel::{CostFit, CostModelParams, Scenario, TimingSample};
use overload_core::detector::ImageTensor;
use overload_core::geometry::{BBox, BoxCandidate};
use overload_core::nms::{CandidateSet, NmsReport};
use overload_core::pipeline_sim::SimTrace;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, LabResult};

pub const TENSOR_MAGIC: &[u8; 4] = b"OVL1";

fn create(path: &Path) -> LabResult<BufWriter<File>> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| LabError::io(parent, e))?;
    }
    File::create(path).map(BufWriter::new).map_err(|e| LabError::io(path, e))
}

fn open(path: &Path) -> LabResult<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| LabError::io(path, e))
}

fn csv_err(path: &Path, e: csv::Error) -> LabError {
    LabError::data(path, e.to_string())
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> LabResult<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| LabError::data(path, e.to_string()))?;
    writeln!(w).and_then(|_| w.flush()).map_err(|e| LabError::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> LabResult<T> {
    serde_json::from_reader(open(path)?).map_err(|e| LabError::data(path, e.to_string()))
}

// ---- candidate sets ----

pub fn write_candidates_to<W: Write>(out: W, set: &CandidateSet) -> csv::Result<()> {
    let k = set.candidates.first().map_or(0, |c| c.class_probs.len());
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> = ["x1", "y1", "x2", "y2", "objectness"].map(String::from).to_vec();
    header.extend((0..k).map(|i| format!("p_{i}")));
    w.write_record(&header)?;
    for c in &set.candidates {
        let b = c.bbox;
        let mut row: Vec<String> = [b.x1, b.y1, b.x2, b.y2, c.objectness].iter().map(f64::to_string).collect();
        row.extend(c.class_probs.iter().map(f64::to_string));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_candidates(path: &Path, set: &CandidateSet) -> LabResult<()> {
    write_candidates_to(create(path)?, set).map_err(|e| csv_err(path, e))
}

/// Parse a candidate CSV. A zero-byte input is an empty set.
pub fn read_candidates_from<R: Read>(input: R, image_id: &str, path: &Path) -> LabResult<CandidateSet> {
    let mut r = csv::ReaderBuilder::new().has_headers(false).from_reader(input);
    let mut records = r.records();
    let header = match records.next() {
        None => return Ok(CandidateSet::new(image_id, Vec::new())),
        Some(h) => h.map_err(|e| csv_err(path, e))?,
    };
    let fixed = ["x1", "y1", "x2", "y2", "objectness"];
    if header.len() < fixed.len() || header.iter().zip(fixed).any(|(a, b)| a.trim() != b) {
        return Err(LabError::data(path, "header must start with x1,y1,x2,y2,objectness"));
    }
    for (i, name) in header.iter().skip(fixed.len()).enumerate() {
        if name.trim() != format!("p_{i}") {
            return Err(LabError::data(path, format!("expected column p_{i}, found {name:?}")));
        }
    }
    let cols = header.len();
    let mut candidates = Vec::new();
    for (line, rec) in records.enumerate() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        if rec.len() != cols {
            return Err(LabError::data(path, format!("row {}: {} fields, expected {cols}", line + 2, rec.len())));
        }
        let vals = rec
            .iter()
            .map(|f| f.trim().parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| LabError::data(path, format!("row {}: {e}", line + 2)))?;
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(LabError::data(path, format!("row {}: non-finite value", line + 2)));
        }
        let bbox = BBox::new(vals[0], vals[1], vals[2], vals[3]);
        candidates.push(BoxCandidate::new(bbox, vals[4], vals[5..].to_vec()));
    }
    Ok(CandidateSet::new(image_id, candidates))
}

pub fn read_candidates(path: &Path) -> LabResult<CandidateSet> {
    let id = path.file_stem().map_or_else(String::new, |s| s.to_string_lossy().into_owned());
    read_candidates_from(open(path)?, &id, path)
}

// ---- image tensors ----

pub fn write_tensor_to<W: Write>(mut out: W, t: &ImageTensor) -> std::io::Result<()> {
    out.write_all(TENSOR_MAGIC)?;
    for v in [3, t.height, t.width, t.channels] {
        out.write_all(&(v as u32).to_le_bytes())?;
    }
    for &v in &t.data {
        out.write_all(&(v as f32).to_le_bytes())?;
    }
    out.flush()
}

/// Values are stored as `f32`, so tensors whose entries are not exactly
/// representable in `f32` come back rounded.
pub fn write_tensor(path: &Path, t: &ImageTensor) -> LabResult<()> {
    write_tensor_to(create(path)?, t).map_err(|e| LabError::io(path, e))
}

pub fn read_tensor_from<R: Read>(mut input: R, path: &Path) -> LabResult<ImageTensor> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes).map_err(|e| LabError::io(path, e))?;
    if bytes.len() < 20 || &bytes[..4] != TENSOR_MAGIC {
        return Err(LabError::data(path, "not an OVL1 tensor"));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize;
    if word(0) != 3 {
        return Err(LabError::data(path, format!("rank {} unsupported, expected 3", word(0))));
    }
    let (h, w, c) = (word(1), word(2), word(3));
    let len = h
        .checked_mul(w)
        .and_then(|v| v.checked_mul(c))
        .ok_or_else(|| LabError::data(path, "dimensions overflow"))?;
    let body = &bytes[20..];
    if body.len() != len * 4 {
        return Err(LabError::data(path, format!("expected {} payload bytes, found {}", len * 4, body.len())));
    }
    let data = body.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64).collect();
    ImageTensor::new(h, w, c, data).map_err(|e| LabError::data(path, e.to_string()))
}

pub fn read_tensor(path: &Path) -> LabResult<ImageTensor> {
    read_tensor_from(open(path)?, path)
}

// ---- timing samples and fits ----

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SampleRow {
    n: usize,
    scenario: Scenario,
    elapsed_us: f64,
    repeats: usize,
}

pub fn write_samples_to<W: Write>(out: W, samples: &[TimingSample]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for s in samples {
        w.serialize(SampleRow {
            n: s.n,
            scenario: s.scenario,
            elapsed_us: s.elapsed.as_nanos() as f64 / 1000.0,
            repeats: s.repeats,
        })?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_samples(path: &Path, samples: &[TimingSample]) -> LabResult<()> {
    write_samples_to(create(path)?, samples).map_err(|e| csv_err(path, e))
}

pub fn read_samples_from<R: Read>(input: R, path: &Path) -> LabResult<Vec<TimingSample>> {
    let mut r = csv::Reader::from_reader(input);
    r.deserialize::<SampleRow>()
        .map(|row| {
            let row = row.map_err(|e| csv_err(path, e))?;
            if !(row.elapsed_us >= 0.0) {
                return Err(LabError::data(path, "elapsed_us must be non-negative"));
            }
            Ok(TimingSample {
                n: row.n,
                scenario: row.scenario,
                elapsed: Duration::from_nanos((row.elapsed_us * 1000.0).round() as u64),
                repeats: row.repeats,
            })
        })
        .collect()
}

pub fn read_samples(path: &Path) -> LabResult<Vec<TimingSample>> {
    read_samples_from(open(path)?, path)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitRecord {
    /// Seconds per squared candidate.
    pub alpha: f64,
    pub t_base_us: f64,
    pub n_break: usize,
    pub r2: f64,
}

impl From<&CostFit> for FitRecord {
    fn from(fit: &CostFit) -> Self {
        Self { alpha: fit.params.alpha, t_base_us: fit.params.t_base * 1e6, n_break: fit.params.n_break, r2: fit.r2 }
    }
}

impl FitRecord {
    pub fn params(&self) -> CostModelParams {
        CostModelParams { alpha: self.alpha, t_base: self.t_base_us / 1e6, n_break: self.n_break }
    }
}

// ---- NMS reports ----

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NmsReportRecord {
    pub image_id: String,
    pub kernel: String,
    pub n_input: usize,
    pub n_kept: usize,
    pub n_pairwise: u64,
    pub elapsed_us: f64,
    pub timed_out: bool,
    pub capped: bool,
    pub kept: Vec<BoxCandidate>,
}

impl NmsReportRecord {
    pub fn new(image_id: &str, kernel: &str, report: &NmsReport) -> Self {
        Self {
            image_id: image_id.to_string(),
            kernel: kernel.to_string(),
            n_input: report.n_input,
            n_kept: report.kept.len(),
            n_pairwise: report.n_pairwise,
            elapsed_us: report.elapsed.as_nanos() as f64 / 1000.0,
            timed_out: report.timed_out,
            capped: report.capped,
            kept: report.kept.clone(),
        }
    }
}

// ---- attack traces ----

/// One row per step: `step,loss,linf,in_range,min_weight,count_0[,count_1..]`.
pub fn write_attack_trace_to<W: Write>(out: W, trace: &AttackTrace) -> csv::Result<()> {
    let models = trace.clean_counts.len();
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> = ["step", "loss", "linf", "in_range", "min_weight"].map(String::from).to_vec();
    header.extend((0..models).map(|i| format!("count_{i}")));
    w.write_record(&header)?;
    for s in &trace.steps {
        let mut row = vec![
            s.step.to_string(),
            s.loss.to_string(),
            s.linf.to_string(),
            s.in_range.to_string(),
            s.min_weight.to_string(),
        ];
        row.extend(s.counts.iter().map(usize::to_string));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_attack_trace(path: &Path, trace: &AttackTrace) -> LabResult<()> {
    write_attack_trace_to(create(path)?, trace).map_err(|e| csv_err(path, e))
}

// ---- simulator traces ----

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimRow {
    pub id: usize,
    pub arrival: f64,
    pub t_wait: f64,
    pub t_comp: f64,
    pub t_total: f64,
    pub timed_out: bool,
}

pub fn sim_rows(trace: &SimTrace) -> Vec<SimRow> {
    trace
        .requests
        .iter()
        .map(|r| SimRow {
            id: r.id,
            arrival: r.arrival,
            t_wait: r.t_wait,
            t_comp: r.t_comp,
            t_total: r.t_total,
            timed_out: r.timed_out,
        })
        .collect()
}

pub fn write_sim_trace_to<W: Write>(out: W, rows: &[SimRow]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_sim_trace(path: &Path, trace: &SimTrace) -> LabResult<()> {
    write_sim_trace_to(create(path)?, &sim_rows(trace)).map_err(|e| csv_err(path, e))
}

pub fn read_sim_trace_from<R: Read>(input: R, path: &Path) -> LabResult<Vec<SimRow>> {
    csv::Reader::from_reader(input).deserialize().map(|r| r.map_err(|e| csv_err(path, e))).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimSummary {
    pub mean_ms: f64,
    pub fps: f64,
    pub ratio: f64,
}
