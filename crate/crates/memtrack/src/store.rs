//! Versioned binary containers for datasets and checkpoints, and text
//! reports.
//!
//! Both binary formats share one container layout (all integers little-endian):
//!
//! ```text
//! magic      [u8; 4]   "MTDS" (dataset) or "MTCK" (checkpoint)
//! version    u32
//! header_len u32       bytes of UTF-8 `key=value` lines
//! body_len   u64
//! crc32      u32       over header bytes followed by body bytes
//! header     [u8; header_len]
//! body       [u8; body_len]
//! ```
//!
//! Bodies hold raw 64-bit little-endian floats, so round trips are exact.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use memtrack_core::memnet::{
    tensor_shapes, FeatureNorm, Masks, NetworkParams, TrainConfig, BELIEF_FEATURES, FEATURE_DIM, TENSOR_NAMES,
};
use memtrack_core::metrics::MetricsReport;
use memtrack_core::models::{MeasurementFrame, ScenarioConfig};
use memtrack_core::simulator::{Case, Dataset, GroundTruthSequence, Regime};
use memtrack_core::Mat;

use crate::error::StoreError;

pub const DATASET_MAGIC: [u8; 4] = *b"MTDS";
pub const DATASET_VERSION: u32 = 1;
pub const CHECKPOINT_MAGIC: [u8; 4] = *b"MTCK";
pub const CHECKPOINT_VERSION: u32 = 1;

const PREFIX_LEN: usize = 4 + 4 + 4 + 8 + 4;

type Header = BTreeMap<String, String>;

fn write_container(path: &Path, magic: [u8; 4], version: u32, header: &Header, body: &[u8]) -> Result<(), StoreError> {
    let mut text = String::new();
    for (k, v) in header {
        writeln!(text, "{k}={v}").expect("writing to a String");
    }
    let mut crc = crc32fast::Hasher::new();
    crc.update(text.as_bytes());
    crc.update(body);
    let io = |e| StoreError::io(path, e);
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    w.write_all(&magic).map_err(io)?;
    w.write_all(&version.to_le_bytes()).map_err(io)?;
    w.write_all(&(text.len() as u32).to_le_bytes()).map_err(io)?;
    w.write_all(&(body.len() as u64).to_le_bytes()).map_err(io)?;
    w.write_all(&crc.finalize().to_le_bytes()).map_err(io)?;
    w.write_all(text.as_bytes()).map_err(io)?;
    w.write_all(body).map_err(io)?;
    w.flush().map_err(io)
}

struct Prefix {
    header_len: usize,
    body_len: u64,
    crc: u32,
}

fn read_prefix(r: &mut impl Read, path: &Path, magic: [u8; 4], version: u32) -> Result<Prefix, StoreError> {
    let mut p = [0u8; PREFIX_LEN];
    r.read_exact(&mut p).map_err(|e| short_read(path, e))?;
    if p[0..4] != magic {
        return Err(StoreError::Malformed(format!(
            "{}: expected magic {:?}, found {:?}",
            path.display(),
            String::from_utf8_lossy(&magic),
            String::from_utf8_lossy(&p[0..4])
        )));
    }
    let found = u32::from_le_bytes(p[4..8].try_into().expect("4 bytes"));
    if found != version {
        return Err(StoreError::VersionMismatch(format!(
            "{}: format version {found}, this build reads version {version}",
            path.display()
        )));
    }
    Ok(Prefix {
        header_len: u32::from_le_bytes(p[8..12].try_into().expect("4 bytes")) as usize,
        body_len: u64::from_le_bytes(p[12..20].try_into().expect("8 bytes")),
        crc: u32::from_le_bytes(p[20..24].try_into().expect("4 bytes")),
    })
}

/// A file that ends early cannot match its checksum.
fn short_read(path: &Path, e: std::io::Error) -> StoreError {
    if e.kind() == std::io::ErrorKind::UnexpectedEof {
        StoreError::ChecksumMismatch(format!("{}: file is truncated", path.display()))
    } else {
        StoreError::io(path, e)
    }
}

fn parse_header(path: &Path, bytes: &[u8]) -> Result<Header, StoreError> {
    let text = std::str::from_utf8(bytes)
        .map_err(|_| StoreError::ChecksumMismatch(format!("{}: header is not UTF-8", path.display())))?;
    let mut h = Header::new();
    for line in text.lines() {
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| StoreError::Malformed(format!("{}: bad header line {line:?}", path.display())))?;
        h.insert(k.to_string(), v.to_string());
    }
    Ok(h)
}

fn read_container(path: &Path, magic: [u8; 4], version: u32, with_body: bool) -> Result<(Header, Vec<u8>), StoreError> {
    let mut r = BufReader::new(File::open(path).map_err(|e| StoreError::io(path, e))?);
    let prefix = read_prefix(&mut r, path, magic, version)?;
    let mut header = vec![0u8; prefix.header_len];
    r.read_exact(&mut header).map_err(|e| short_read(path, e))?;
    if !with_body {
        return Ok((parse_header(path, &header)?, Vec::new()));
    }
    let mut body = Vec::new();
    r.read_to_end(&mut body).map_err(|e| StoreError::io(path, e))?;
    if body.len() as u64 != prefix.body_len {
        return Err(StoreError::ChecksumMismatch(format!(
            "{}: body is {} bytes, header declares {}",
            path.display(),
            body.len(),
            prefix.body_len
        )));
    }
    let mut crc = crc32fast::Hasher::new();
    crc.update(&header);
    crc.update(&body);
    if crc.finalize() != prefix.crc {
        return Err(StoreError::ChecksumMismatch(format!("{}: CRC-32 does not match contents", path.display())));
    }
    Ok((parse_header(path, &header)?, body))
}

fn field<T: std::str::FromStr>(h: &Header, key: &str) -> Result<T, StoreError> {
    let v = h.get(key).ok_or_else(|| StoreError::Malformed(format!("header lacks {key}")))?;
    v.parse().map_err(|_| StoreError::Malformed(format!("header field {key}={v:?} is invalid")))
}

/// Little-endian body encoder.
#[derive(Default)]
struct Body(Vec<u8>);

impl Body {
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64s(&mut self, vs: &[f64]) {
        vs.iter().for_each(|v| self.f64(*v));
    }
}

/// Little-endian body decoder; running out of bytes means the declared
/// layout and the content disagree.
struct Cursor<'a> {
    bytes: &'a [u8],
}

impl Cursor<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8], StoreError> {
        if self.bytes.len() < n {
            return Err(StoreError::Malformed("body is shorter than its header describes".into()));
        }
        let (head, tail) = self.bytes.split_at(n);
        self.bytes = tail;
        Ok(head)
    }
    fn u64(&mut self) -> Result<u64, StoreError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn len(&mut self) -> Result<usize, StoreError> {
        usize::try_from(self.u64()?).map_err(|_| StoreError::Malformed("length overflows usize".into()))
    }
    fn f64(&mut self) -> Result<f64, StoreError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn f64s(&mut self, n: usize) -> Result<Vec<f64>, StoreError> {
        (0..n).map(|_| self.f64()).collect()
    }
    fn finish(self) -> Result<(), StoreError> {
        if self.bytes.is_empty() {
            Ok(())
        } else {
            Err(StoreError::Malformed(format!("{} trailing body bytes", self.bytes.len())))
        }
    }
}

// ---------------------------------------------------------------- datasets

/// Dataset header, readable without loading the cases.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetHeader {
    pub version: u32,
    pub config: ScenarioConfig,
    pub cases: usize,
    pub steps: usize,
}

fn scenario_header(c: &ScenarioConfig) -> Header {
    // `{}` on f64 prints the shortest text that parses back to the same value
    [
        ("steps", c.steps.to_string()),
        ("dt", c.dt.to_string()),
        ("sigma_w", c.sigma_w.to_string()),
        ("sigma_v", c.sigma_v.to_string()),
        ("major_axis", c.major_axis.to_string()),
        ("minor_axis", c.minor_axis.to_string()),
        ("speed", c.speed.to_string()),
        ("scatter_rate", c.scatter_rate.to_string()),
        ("cases", c.cases.to_string()),
        ("train_cases", c.train_cases.to_string()),
        ("turn_rate_min_deg", c.turn_rate_min_deg.to_string()),
        ("turn_rate_max_deg", c.turn_rate_max_deg.to_string()),
        ("segment_min", c.segment_min.to_string()),
        ("segment_max", c.segment_max.to_string()),
        ("area", c.area.to_string()),
        ("seed", c.seed.to_string()),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect()
}

fn scenario_from_header(h: &Header) -> Result<ScenarioConfig, StoreError> {
    Ok(ScenarioConfig {
        steps: field(h, "steps")?,
        dt: field(h, "dt")?,
        sigma_w: field(h, "sigma_w")?,
        sigma_v: field(h, "sigma_v")?,
        major_axis: field(h, "major_axis")?,
        minor_axis: field(h, "minor_axis")?,
        speed: field(h, "speed")?,
        scatter_rate: field(h, "scatter_rate")?,
        cases: field(h, "cases")?,
        train_cases: field(h, "train_cases")?,
        turn_rate_min_deg: field(h, "turn_rate_min_deg")?,
        turn_rate_max_deg: field(h, "turn_rate_max_deg")?,
        segment_min: field(h, "segment_min")?,
        segment_max: field(h, "segment_max")?,
        area: field(h, "area")?,
        seed: field(h, "seed")?,
    })
}

/// Body layout: train indices, test indices (each a count then `u64`s), then
/// per case: `K`, then per step the state (4 floats), extent upper triangle
/// `(e00, e01, e11)`, turn rate (NaN for CV) and the frame as a point count
/// followed by `x, y` pairs.
pub fn write_dataset(path: &Path, d: &Dataset) -> Result<(), StoreError> {
    let steps = d.cases.first().map_or(d.config.steps, |c| c.truth.len());
    let mut h = scenario_header(&d.config);
    h.insert("format".into(), "memtrack-dataset".into());
    h.insert("case_count".into(), d.cases.len().to_string());
    h.insert("k".into(), steps.to_string());
    h.insert("noise_level".into(), format!("{}/{}", d.config.sigma_w, d.config.sigma_v));
    let mut b = Body::default();
    for split in [&d.train, &d.test] {
        b.u64(split.len() as u64);
        split.iter().for_each(|&i| b.u64(i as u64));
    }
    for case in &d.cases {
        let t = &case.truth;
        if t.extents.len() != t.len() || t.regimes.len() != t.len() || case.frames.len() != t.len() {
            return Err(memtrack_core::Error::ShapeMismatch.into());
        }
        b.u64(t.len() as u64);
        for k in 0..t.len() {
            b.f64s(&t.states[k]);
            let e = &t.extents[k];
            b.f64s(&[e[(0, 0)], e[(0, 1)], e[(1, 1)]]);
            b.f64(match t.regimes[k] {
                Regime::ConstantVelocity => f64::NAN,
                Regime::CoordinatedTurn(w) => w,
            });
            let points = case.frames[k].points();
            b.u64(points.len() as u64);
            points.iter().for_each(|p| b.f64s(p));
        }
    }
    write_container(path, DATASET_MAGIC, DATASET_VERSION, &h, &b.0)
}

fn dataset_header(h: &Header) -> Result<DatasetHeader, StoreError> {
    Ok(DatasetHeader {
        version: DATASET_VERSION,
        config: scenario_from_header(h)?,
        cases: field(h, "case_count")?,
        steps: field(h, "k")?,
    })
}

/// Reads only the header: configuration, case count and sequence length.
pub fn read_dataset_header(path: &Path) -> Result<DatasetHeader, StoreError> {
    let (h, _) = read_container(path, DATASET_MAGIC, DATASET_VERSION, false)?;
    dataset_header(&h)
}

pub fn read_dataset(path: &Path) -> Result<Dataset, StoreError> {
    let (h, body) = read_container(path, DATASET_MAGIC, DATASET_VERSION, true)?;
    let header = dataset_header(&h)?;
    let mut c = Cursor { bytes: &body };
    let mut splits = Vec::with_capacity(2);
    for _ in 0..2 {
        let n = c.len()?;
        splits.push((0..n).map(|_| c.len()).collect::<Result<Vec<_>, _>>()?);
    }
    let test = splits.pop().expect("two splits");
    let train = splits.pop().expect("two splits");
    let mut cases = Vec::with_capacity(header.cases);
    for _ in 0..header.cases {
        let k = c.len()?;
        let mut truth = GroundTruthSequence {
            states: Vec::with_capacity(k),
            extents: Vec::with_capacity(k),
            regimes: Vec::with_capacity(k),
        };
        let mut frames = Vec::with_capacity(k);
        for _ in 0..k {
            let s = c.f64s(4)?;
            truth.states.push([s[0], s[1], s[2], s[3]]);
            let e = c.f64s(3)?;
            truth.extents.push(Mat::from_rows(&[[e[0], e[1]], [e[1], e[2]]]));
            let w = c.f64()?;
            truth.regimes.push(if w.is_nan() { Regime::ConstantVelocity } else { Regime::CoordinatedTurn(w) });
            let n = c.len()?;
            let pts = c.f64s(2 * n)?;
            frames.push(MeasurementFrame::new(pts.chunks_exact(2).map(|p| [p[0], p[1]]).collect())?);
        }
        cases.push(Case { truth, frames });
    }
    c.finish()?;
    if train.iter().chain(&test).any(|&i| i >= cases.len()) {
        return Err(StoreError::Malformed("split index out of range".into()));
    }
    Ok(Dataset { config: header.config, cases, train, test })
}

// ------------------------------------------------------------- checkpoints

/// Short digest of a training configuration, recorded in checkpoints.
pub fn config_digest(cfg: &TrainConfig) -> String {
    format!("{:08x}", crc32fast::hash(format!("{cfg:?}").as_bytes()))
}

fn mask_text(m: &Masks) -> String {
    let names: Vec<&str> = [(m.mub, "mub"), (m.jeb, "jeb"), (m.jub, "jub")]
        .into_iter()
        .filter_map(|(on, n)| on.then_some(n))
        .collect();
    if names.is_empty() {
        "none".into()
    } else {
        names.join(",")
    }
}

/// Body layout: feature mean and scale (18 floats each), then every tensor in
/// slot order, row-major.
pub fn write_checkpoint(path: &Path, params: &NetworkParams, digest: &str) -> Result<(), StoreError> {
    params.validate()?;
    let mut h = Header::new();
    h.insert("format".into(), "memtrack-checkpoint".into());
    h.insert("memory_dim".into(), params.memory_dim.to_string());
    h.insert("feature_dim".into(), FEATURE_DIM.to_string());
    h.insert("belief_features".into(), BELIEF_FEATURES.to_string());
    h.insert("mask".into(), mask_text(&params.masks));
    h.insert("config_digest".into(), digest.to_string());
    let shapes: Vec<String> =
        TENSOR_NAMES.iter().zip(&params.tensors).map(|(n, t)| format!("{n}:{}x{}", t.rows(), t.cols())).collect();
    h.insert("tensors".into(), shapes.join(","));
    let mut b = Body::default();
    b.f64s(&params.norm.mean);
    b.f64s(&params.norm.scale);
    params.tensors.iter().for_each(|t| b.f64s(t.data()));
    write_container(path, CHECKPOINT_MAGIC, CHECKPOINT_VERSION, &h, &b.0)
}

/// Checkpoint with its recorded training-configuration digest.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub params: NetworkParams,
    pub config_digest: String,
}

/// Reads a checkpoint; `expected_memory_dim` rejects networks of another size.
pub fn read_checkpoint(path: &Path, expected_memory_dim: Option<usize>) -> Result<Checkpoint, StoreError> {
    let (h, body) = read_container(path, CHECKPOINT_MAGIC, CHECKPOINT_VERSION, true)?;
    let memory_dim: usize = field(&h, "memory_dim")?;
    if let Some(want) = expected_memory_dim.filter(|w| *w != memory_dim) {
        return Err(StoreError::VersionMismatch(format!(
            "{}: checkpoint memory_dim {memory_dim}, run expects {want}",
            path.display()
        )));
    }
    for (key, want) in [("feature_dim", FEATURE_DIM), ("belief_features", BELIEF_FEATURES)] {
        let found: usize = field(&h, key)?;
        if found != want {
            return Err(StoreError::VersionMismatch(format!("{}: {key} {found}, this build uses {want}", path.display())));
        }
    }
    let shapes = tensor_shapes(memory_dim);
    let expected: Vec<String> =
        TENSOR_NAMES.iter().zip(shapes).map(|(n, (r, c))| format!("{n}:{r}x{c}")).collect();
    if field::<String>(&h, "tensors")? != expected.join(",") {
        return Err(StoreError::VersionMismatch(format!("{}: tensor table differs from this build", path.display())));
    }
    let floats = 2 * FEATURE_DIM + shapes.iter().map(|(r, c)| r * c).sum::<usize>();
    if body.len() != 8 * floats {
        return Err(StoreError::Malformed(format!("body holds {} bytes, tensor table needs {}", body.len(), 8 * floats)));
    }
    let masks = crate::config::parse_masks(&field::<String>(&h, "mask")?).map_err(StoreError::Malformed)?;
    let mut c = Cursor { bytes: &body };
    let norm = FeatureNorm { mean: c.f64s(FEATURE_DIM)?, scale: c.f64s(FEATURE_DIM)? };
    let tensors = shapes
        .iter()
        .map(|&(r, cols)| Ok(Mat::from_vec(r, cols, c.f64s(r * cols)?)))
        .collect::<Result<Vec<_>, StoreError>>()?;
    c.finish()?;
    let params = NetworkParams { memory_dim, masks, norm, tensors };
    params.validate()?;
    Ok(Checkpoint { params, config_digest: field(&h, "config_digest")? })
}

// ----------------------------------------------------------------- reports

/// Formats a float with 17 significant digits.
pub fn num(v: f64) -> String {
    format!("{v:.16e}")
}

fn write_text(path: &Path, text: &str) -> Result<(), StoreError> {
    std::fs::write(path, text).map_err(|e| StoreError::io(path, e))
}

/// Per-step series `case,step,rmse,iou,gwd`; `step` is the ground-truth step
/// the posterior is scored against, and `rmse` is that step's position error.
pub fn report_csv(report: &MetricsReport) -> String {
    let mut s = String::from("case,step,rmse,iou,gwd\n");
    for (j, c) in report.cases.iter().enumerate() {
        for k in 0..c.position_error.len() {
            writeln!(s, "{j},{},{},{},{}", k + 1, num(c.position_error[k]), num(c.iou[k]), num(c.gwd[k]))
                .expect("writing to a String");
        }
    }
    s
}

fn aggregate_fields(r: &MetricsReport) -> Vec<(&'static str, String)> {
    vec![
        ("cases", r.cases.len().to_string()),
        ("steps", r.cases.first().map_or(0, |c| c.position_error.len()).to_string()),
        ("mean_squared_error", num(r.mean_squared_error)),
        ("rmse", num(r.rmse)),
        ("mean_iou", num(r.mean_iou)),
        ("mean_gwd", num(r.mean_gwd)),
        ("peak_position_error", num(r.peak_position_error)),
        ("min_iou", num(r.min_iou)),
        ("max_gwd", num(r.max_gwd)),
    ]
}

fn json_object(fields: &[(&str, String)], indent: &str) -> String {
    let body: Vec<String> = fields.iter().map(|(k, v)| format!("{indent}  \"{k}\": {v}")).collect();
    format!("{{\n{}\n{indent}}}", body.join(",\n"))
}

/// Aggregates and peaks as a JSON object.
pub fn report_json(report: &MetricsReport) -> String {
    json_object(&aggregate_fields(report), "") + "\n"
}

/// Named reports side by side as one JSON object keyed by method.
pub fn comparison_json(rows: &[(&str, &MetricsReport)]) -> String {
    let fields: Vec<(&str, String)> =
        rows.iter().map(|(name, r)| (*name, json_object(&aggregate_fields(r), "  "))).collect();
    json_object(&fields, "") + "\n"
}

/// `method,rmse,iou,gwd` table of the dataset means.
pub fn comparison_csv(rows: &[(&str, &MetricsReport)]) -> String {
    let mut s = String::from("method,rmse,iou,gwd\n");
    for (name, r) in rows {
        writeln!(s, "{name},{},{},{}", num(r.rmse), num(r.mean_iou), num(r.mean_gwd)).expect("writing to a String");
    }
    s
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
}

pub fn write_report(report: &MetricsReport, path: &Path, format: ReportFormat) -> Result<(), StoreError> {
    let text = match format {
        ReportFormat::Csv => report_csv(report),
        ReportFormat::Json => report_json(report),
    };
    write_text(path, &text)
}

pub(crate) fn write_string(path: &Path, text: &str) -> Result<(), StoreError> {
    write_text(path, text)
}
