//! Tables, number formatting, atomic writes and the dataset / checkpoint
//! file formats.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use primelab_core::synth::{GeneratorId, Region, SyntheticDataset};
use primelab_core::Matrix;
use serde::{de::DeserializeOwned, Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{LabError, LabResult};

/// Version of every CSV layout written by the runners.
pub const CSV_SCHEMA_VERSION: u32 = 1;
/// Version of the binary snapshot envelope.
pub const SNAPSHOT_VERSION: u32 = 1;

/// Formats like C's `%.12g`.
pub fn fmt_g(x: f64) -> String {
    const P: i32 = 12;
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return if x.is_sign_negative() { "-0".into() } else { "0".into() };
    }
    let sci = format!("{:.*e}", (P - 1) as usize, x);
    let (mantissa, exp) = sci.split_once('e').expect("exponent marker");
    let exp: i32 = exp.parse().expect("integer exponent");
    if exp < -4 || exp >= P {
        let m = strip_zeros(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{m}e{sign}{:02}", exp.abs())
    } else {
        strip_zeros(&format!("{:.*}", (P - 1 - exp) as usize, x)).to_string()
    }
}

fn strip_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

/// Writes `bytes` to a temporary file next to `path`, then renames it.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> LabResult<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    fs::create_dir_all(&dir).map_err(|e| LabError::io(&dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(&dir).map_err(|e| LabError::io(&dir, e))?;
    tmp.write_all(bytes).map_err(|e| LabError::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| LabError::io(path, e))?;
    tmp.persist(path).map_err(|e| LabError::io(path, e.error))?;
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputFormat {
    Csv,
    Json,
}

impl OutputFormat {
    pub fn extension(self) -> &'static str {
        match self {
            OutputFormat::Csv => "csv",
            OutputFormat::Json => "json",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Cell {
    Str(String),
    Num(f64),
    Int(i64),
    Bool(bool),
    Missing,
}

impl Cell {
    fn csv(&self) -> String {
        match self {
            Cell::Str(s) => s.clone(),
            Cell::Num(x) => fmt_g(*x),
            Cell::Int(i) => i.to_string(),
            Cell::Bool(b) => b.to_string(),
            Cell::Missing => String::new(),
        }
    }

    fn json(&self) -> Value {
        match self {
            Cell::Str(s) => Value::from(s.as_str()),
            Cell::Num(x) if x.is_finite() => Value::from(*x),
            Cell::Num(_) | Cell::Missing => Value::Null,
            Cell::Int(i) => Value::from(*i),
            Cell::Bool(b) => Value::from(*b),
        }
    }
}

impl From<f64> for Cell {
    fn from(x: f64) -> Self {
        Cell::Num(x)
    }
}

impl From<Option<f64>> for Cell {
    fn from(x: Option<f64>) -> Self {
        x.map_or(Cell::Missing, Cell::Num)
    }
}

impl From<usize> for Cell {
    fn from(x: usize) -> Self {
        Cell::Int(x as i64)
    }
}

impl From<u64> for Cell {
    fn from(x: u64) -> Self {
        Cell::Int(x as i64)
    }
}

impl From<bool> for Cell {
    fn from(x: bool) -> Self {
        Cell::Bool(x)
    }
}

impl From<&str> for Cell {
    fn from(x: &str) -> Self {
        Cell::Str(x.into())
    }
}

impl From<String> for Cell {
    fn from(x: String) -> Self {
        Cell::Str(x)
    }
}

/// A tidy table: one header, rows of equal length.
#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    columns: Vec<String>,
    rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new<S: Into<String>>(columns: impl IntoIterator<Item = S>) -> Self {
        Self {
            columns: columns.into_iter().map(Into::into).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        assert_eq!(row.len(), self.columns.len(), "row width must match the header");
        self.rows.push(row);
    }

    pub fn columns(&self) -> &[String] {
        &self.columns
    }

    pub fn rows(&self) -> &[Vec<Cell>] {
        &self.rows
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    pub fn to_csv(&self) -> LabResult<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.columns)?;
        for row in &self.rows {
            w.write_record(row.iter().map(Cell::csv))?;
        }
        w.into_inner().map_err(|e| LabError::Snapshot(e.to_string()))
    }

    /// Array of objects keyed by column name.
    pub fn to_json(&self) -> Value {
        Value::Array(
            self.rows
                .iter()
                .map(|r| {
                    Value::Object(
                        self.columns
                            .iter()
                            .zip(r)
                            .map(|(c, v)| (c.clone(), v.json()))
                            .collect(),
                    )
                })
                .collect(),
        )
    }

    pub fn render(&self, format: OutputFormat) -> LabResult<Vec<u8>> {
        match format {
            OutputFormat::Csv => self.to_csv(),
            OutputFormat::Json => Ok(json_bytes(&self.to_json())?),
        }
    }
}

pub fn json_bytes<T: Serialize + ?Sized>(value: &T) -> LabResult<Vec<u8>> {
    let mut v = serde_json::to_vec_pretty(value)?;
    v.push(b'\n');
    Ok(v)
}

#[derive(Serialize, Deserialize)]
struct Envelope<T> {
    magic: String,
    version: u32,
    payload: T,
}

/// Serializes `payload` into a versioned CBOR envelope tagged with `magic`.
pub fn snapshot_bytes<T: Serialize>(magic: &str, payload: &T) -> LabResult<Vec<u8>> {
    let env = Envelope {
        magic: magic.into(),
        version: SNAPSHOT_VERSION,
        payload,
    };
    let mut out = Vec::new();
    ciborium::into_writer(&env, &mut out).map_err(|e| LabError::Snapshot(e.to_string()))?;
    Ok(out)
}

pub fn snapshot_from_bytes<T: DeserializeOwned>(magic: &str, bytes: &[u8]) -> LabResult<T> {
    let env: Envelope<T> = ciborium::from_reader(bytes).map_err(|e| LabError::Snapshot(e.to_string()))?;
    if env.magic != magic {
        return Err(LabError::Snapshot(format!("expected a {magic} snapshot, found {}", env.magic)));
    }
    if env.version != SNAPSHOT_VERSION {
        return Err(LabError::Snapshot(format!("unsupported snapshot version {}", env.version)));
    }
    Ok(env.payload)
}

fn read(path: &Path) -> LabResult<Vec<u8>> {
    fs::read(path).map_err(|e| LabError::io(path, e))
}

const DATASET_MAGIC: &str = "primelab-dataset";
const CHECKPOINT_MAGIC: &str = "primelab-checkpoint";

/// Dataset CSV: `x0..x{d-1}, target, region`, numbers in shortest
/// round-trip form.
pub fn dataset_csv(data: &SyntheticDataset) -> LabResult<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let d = data.dim();
    let mut header: Vec<String> = (0..d).map(|j| format!("x{j}")).collect();
    header.push("target".into());
    header.push("region".into());
    w.write_record(&header)?;
    for i in 0..data.len() {
        let mut rec: Vec<String> = data.inputs().row(i).iter().map(|v| format!("{v:?}")).collect();
        rec.push(format!("{:?}", data.targets()[i]));
        rec.push(data.region().as_str().into());
        w.write_record(&rec)?;
    }
    w.into_inner().map_err(|e| LabError::Snapshot(e.to_string()))
}

pub fn dataset_from_csv(bytes: &[u8], generator: GeneratorId, seed: u64) -> LabResult<SyntheticDataset> {
    let mut r = csv::Reader::from_reader(bytes);
    let header = r.headers()?.clone();
    let width = header.len();
    if width < 3 || &header[width - 2] != "target" || &header[width - 1] != "region" {
        return Err(LabError::Config("dataset CSV needs feature columns, target and region".into()));
    }
    let d = width - 2;
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    let mut region = None;
    for rec in r.records() {
        let rec = rec?;
        for j in 0..d {
            xs.push(parse_f64(&rec[j])?);
        }
        ys.push(parse_f64(&rec[d])?);
        let reg = match &rec[d + 1] {
            "in_distribution" => Region::InDistribution,
            "out_of_distribution" => Region::OutOfDistribution,
            other => return Err(LabError::Config(format!("unknown region {other:?}"))),
        };
        if region.is_some_and(|r| r != reg) {
            return Err(LabError::Config("dataset CSV mixes regions".into()));
        }
        region = Some(reg);
    }
    let region = region.ok_or_else(|| LabError::Config("dataset CSV has no rows".into()))?;
    let n = ys.len();
    Ok(SyntheticDataset::new(Matrix::new(n, d, xs)?, ys, region, generator, seed)?)
}

fn parse_f64(s: &str) -> LabResult<f64> {
    s.trim()
        .parse()
        .map_err(|_| LabError::Config(format!("not a number: {s:?}")))
}

/// Writes `<stem>.csv` and `<stem>.cbor` into `dir`.
pub fn write_dataset(data: &SyntheticDataset, dir: &Path, stem: &str) -> LabResult<Vec<PathBuf>> {
    let csv_path = dir.join(format!("{stem}.csv"));
    let bin_path = dir.join(format!("{stem}.cbor"));
    atomic_write(&csv_path, &dataset_csv(data)?)?;
    atomic_write(&bin_path, &snapshot_bytes(DATASET_MAGIC, data)?)?;
    Ok(vec![csv_path, bin_path])
}

pub fn read_dataset_snapshot(path: &Path) -> LabResult<SyntheticDataset> {
    let data: SyntheticDataset = snapshot_from_bytes(DATASET_MAGIC, &read(path)?)?;
    // re-validate through the checked constructor
    Ok(SyntheticDataset::new(
        Matrix::new(data.len(), data.dim(), data.inputs().as_slice().to_vec())?,
        data.targets().to_vec(),
        data.region(),
        data.generator(),
        data.seed(),
    )?)
}

/// Model families stored in checkpoints.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "model", rename_all = "snake_case")]
pub enum Checkpoint {
    Mlp(primelab_core::nnet::Mlp),
    TwoLayer(primelab_core::nnet::TwoLayerNet),
    PrimeNet(primelab_core::priming::PrimeNetModel),
    KeyPolicy(primelab_core::priming::KeyPolicy),
}

impl Checkpoint {
    pub fn kind(&self) -> &'static str {
        match self {
            Checkpoint::Mlp(_) => "mlp",
            Checkpoint::TwoLayer(_) => "two_layer",
            Checkpoint::PrimeNet(_) => "prime_net",
            Checkpoint::KeyPolicy(_) => "key_policy",
        }
    }

    /// Dimensions and activations for the JSON descriptor.
    pub fn describe(&self) -> Value {
        use primelab_core::nnet::Mlp;
        fn mlp(m: &Mlp) -> Value {
            let mut sizes = vec![m.input_dim()];
            sizes.extend(m.layers().iter().map(|l| l.out_dim()));
            json!({
                "sizes": sizes,
                "activations": m.layers().iter().map(|l| l.activation.as_str()).collect::<Vec<_>>(),
                "injection": m.injection().map(|i| json!({"layer": i.layer, "dim": i.dim})),
                "num_params": m.num_params(),
            })
        }
        match self {
            Checkpoint::Mlp(m) => mlp(m),
            Checkpoint::TwoLayer(n) => json!({
                "input_dim": n.input_dim(),
                "width": n.width(),
                "activation": n.activation().as_str(),
            }),
            Checkpoint::PrimeNet(p) => {
                use primelab_core::priming::PrimingModule;
                let priming = match p.priming() {
                    PrimingModule::Learned { net, source } => json!({"learned": mlp(net), "source": source}),
                    PrimingModule::Teacher { teacher } => json!({"teacher": teacher.label()}),
                };
                json!({
                    "main": mlp(p.main()),
                    "priming": priming,
                    "key_input": p.key_input(),
                    "fusion": p.fusion().as_str(),
                    "stop_gradient": p.stop_gradient(),
                    "zeta_dim": p.zeta_dim(),
                })
            }
            Checkpoint::KeyPolicy(k) => json!({"key_input": k.key_input, "net": mlp(&k.net)}),
        }
    }
}

/// Writes `<stem>.ckpt` (binary) and `<stem>.json` (descriptor).
pub fn write_checkpoint(ckpt: &Checkpoint, seed: u64, dir: &Path, stem: &str) -> LabResult<Vec<PathBuf>> {
    let bin = dir.join(format!("{stem}.ckpt"));
    let desc = dir.join(format!("{stem}.json"));
    atomic_write(&bin, &snapshot_bytes(CHECKPOINT_MAGIC, ckpt)?)?;
    let d = json!({
        "format_version": SNAPSHOT_VERSION,
        "kind": ckpt.kind(),
        "seed": seed,
        "snapshot": format!("{stem}.ckpt"),
        "model": ckpt.describe(),
    });
    atomic_write(&desc, &json_bytes(&d)?)?;
    Ok(vec![bin, desc])
}

pub fn read_checkpoint(path: &Path) -> LabResult<Checkpoint> {
    snapshot_from_bytes(CHECKPOINT_MAGIC, &read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn g12_matches_c_printf() {
        // reference strings from C printf("%.12g")
        let cases = [
            (0.1, "0.1"),
            (1.0 / 3.0, "0.333333333333"),
            (-2.5e-7, "-2.5e-07"),
            (123456789012.0, "123456789012"),
            (1234567890123.0, "1.23456789012e+12"),
            (1e-4, "0.0001"),
            (9.999999999995e-5, "9.99999999999e-05"),
            (0.00012345678901234, "0.000123456789012"),
            (99999999999.99, "100000000000"),
            (999999999999.5, "1e+12"),
            (6.02214076e23, "6.02214076e+23"),
            (-0.0, "-0"),
            (1.0, "1"),
            (100.0, "100"),
            (std::f64::consts::SQRT_2, "1.41421356237"),
            (5e-324, "4.94065645841e-324"),
            (f64::MAX, "1.79769313486e+308"),
            (123.456, "123.456"),
            (1e11, "100000000000"),
            (-1234.5678901234567, "-1234.56789012"),
        ];
        for (x, want) in cases {
            assert_eq!(fmt_g(x), want, "{x:?}");
        }
        assert_eq!(fmt_g(f64::NAN), "nan");
        assert_eq!(fmt_g(f64::NEG_INFINITY), "-inf");
    }

    #[test]
    fn table_renders_header_and_json() {
        let mut t = Table::new(["a", "b", "c"]);
        t.push(vec!["x".into(), 0.5.into(), Cell::Missing]);
        assert_eq!(String::from_utf8(t.to_csv().unwrap()).unwrap(), "a,b,c\nx,0.5,\n");
        assert_eq!(t.to_json(), json!([{"a": "x", "b": 0.5, "c": null}]));
    }
}
