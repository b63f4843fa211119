//! Loading recordings from CSV, raw binary and MAT-v5 files, driven by a
//! dataset manifest.

pub mod mat;

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Deserializer, Serialize};

use crate::error::{Error, Result};
use crate::signal::{FaultLabel, Signal};

/// Metadata attached to a loaded signal.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SignalMeta {
    pub id: String,
    pub dataset_id: String,
    pub condition_id: String,
    pub label: FaultLabel,
}

impl SignalMeta {
    fn into_signal(self, samples: Vec<f64>, sample_rate_hz: f64) -> Result<Signal> {
        Signal::new(
            self.id,
            samples,
            sample_rate_hz,
            self.dataset_id,
            self.condition_id,
            self.label,
        )
    }
}

/// A CSV column, by header name or zero-based index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ColumnRef {
    Name(String),
    Index(usize),
}

impl ColumnRef {
    /// Numeric strings are indices, anything else a header name.
    pub fn parse(s: &str) -> ColumnRef {
        s.parse().map(ColumnRef::Index).unwrap_or_else(|_| ColumnRef::Name(s.to_string()))
    }
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

/// Read one numeric column. A first row that does not parse as numbers is
/// taken as the header.
pub fn read_csv_column<R: std::io::Read>(reader: R, column: &ColumnRef) -> Result<Vec<f64>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut records = rdr.records();
    let first = match records.next() {
        Some(r) => r?,
        None => return Err(Error::EmptyInput),
    };
    let is_header = first.iter().any(|c| c.parse::<f64>().is_err());
    let idx = match column {
        ColumnRef::Index(i) => *i,
        ColumnRef::Name(name) => {
            if !is_header {
                return Err(Error::MissingColumn(name.clone()));
            }
            first
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| Error::MissingColumn(name.clone()))?
        }
    };
    let mut out = Vec::new();
    let mut take = |rec: &csv::StringRecord| -> Result<()> {
        let row = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        let cell = rec.get(idx).ok_or_else(|| match column {
            ColumnRef::Index(i) => Error::MissingColumn(i.to_string()),
            ColumnRef::Name(n) => Error::MissingColumn(n.clone()),
        })?;
        let v: f64 = cell.parse().map_err(|_| Error::NonNumericCell {
            row,
            value: cell.to_string(),
        })?;
        out.push(v);
        Ok(())
    };
    if !is_header {
        take(&first)?;
    }
    for rec in records {
        take(&rec?)?;
    }
    Ok(out)
}

pub fn load_csv(
    path: &Path,
    column: &ColumnRef,
    sample_rate_hz: f64,
    meta: SignalMeta,
) -> Result<Signal> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let samples = read_csv_column(BufReader::new(file), column)?;
    meta.into_signal(samples, sample_rate_hz)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ElementType {
    F32,
    #[default]
    F64,
}

impl ElementType {
    pub fn size(self) -> usize {
        match self {
            ElementType::F32 => 4,
            ElementType::F64 => 8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ByteOrder {
    #[default]
    Little,
    Big,
}

pub fn decode_raw(bytes: &[u8], elem: ElementType, order: ByteOrder) -> Result<Vec<f64>> {
    let size = elem.size();
    if bytes.len() % size != 0 {
        return Err(Error::SizeMismatch {
            len: bytes.len(),
            elem: size,
        });
    }
    Ok(bytes
        .chunks_exact(size)
        .map(|c| match (elem, order) {
            (ElementType::F32, ByteOrder::Little) => {
                f32::from_le_bytes(c.try_into().unwrap()) as f64
            }
            (ElementType::F32, ByteOrder::Big) => f32::from_be_bytes(c.try_into().unwrap()) as f64,
            (ElementType::F64, ByteOrder::Little) => f64::from_le_bytes(c.try_into().unwrap()),
            (ElementType::F64, ByteOrder::Big) => f64::from_be_bytes(c.try_into().unwrap()),
        })
        .collect())
}

pub fn load_raw(
    path: &Path,
    elem: ElementType,
    order: ByteOrder,
    sample_rate_hz: f64,
    meta: SignalMeta,
) -> Result<Signal> {
    let samples = decode_raw(&read_bytes(path)?, elem, order)?;
    meta.into_signal(samples, sample_rate_hz)
}

/// Write samples as a headerless raw stream. `f32` output rounds.
pub fn write_raw(path: &Path, samples: &[f64], elem: ElementType, order: ByteOrder) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for &x in samples {
        let res = match (elem, order) {
            (ElementType::F32, ByteOrder::Little) => w.write_all(&(x as f32).to_le_bytes()),
            (ElementType::F32, ByteOrder::Big) => w.write_all(&(x as f32).to_be_bytes()),
            (ElementType::F64, ByteOrder::Little) => w.write_all(&x.to_le_bytes()),
            (ElementType::F64, ByteOrder::Big) => w.write_all(&x.to_be_bytes()),
        };
        res.map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Load a variable from a MAT-v5 file, flattened column-major.
pub fn load_mat_v5(
    path: &Path,
    variable: &str,
    sample_rate_hz: f64,
    meta: SignalMeta,
) -> Result<Signal> {
    let arr = mat::read_variable(&read_bytes(path)?, variable)?;
    meta.into_signal(arr.data, sample_rate_hz)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FileFormat {
    Csv,
    Raw,
    Mat,
}

impl FileFormat {
    fn from_extension(path: &Path) -> Option<FileFormat> {
        match path.extension()?.to_str()?.to_ascii_lowercase().as_str() {
            "csv" | "txt" => Some(FileFormat::Csv),
            "mat" => Some(FileFormat::Mat),
            "bin" | "raw" | "f32" | "f64" => Some(FileFormat::Raw),
            _ => None,
        }
    }
}

fn string_or_int<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<String, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Either {
        S(String),
        I(i64),
    }
    Ok(match Either::deserialize(d)? {
        Either::S(s) => s,
        Either::I(i) => i.to_string(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub path: PathBuf,
    #[serde(default)]
    pub format: Option<FileFormat>,
    /// CSV column or MAT variable name. Defaults to column 0 for CSV.
    #[serde(default)]
    pub channel: Option<String>,
    pub sample_rate_hz: f64,
    #[serde(deserialize_with = "string_or_int")]
    pub condition: String,
    pub label: FaultLabel,
    #[serde(default)]
    pub dtype: ElementType,
    #[serde(default)]
    pub byte_order: ByteOrder,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub dataset_id: String,
    /// Declared label subset; defaults by dataset name.
    #[serde(default)]
    pub labels: Option<Vec<FaultLabel>>,
    #[serde(default, rename = "entry")]
    pub entries: Vec<ManifestEntry>,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

/// Label space of the well-known datasets. MFPT and PU have no rolling
/// element faults; anything unknown gets all four classes.
pub fn default_label_space(dataset_id: &str) -> Vec<FaultLabel> {
    match dataset_id.to_ascii_uppercase().as_str() {
        "MFPT" | "PU" => vec![FaultLabel::Normal, FaultLabel::InnerRace, FaultLabel::OuterRace],
        _ => FaultLabel::ALL.to_vec(),
    }
}

impl DatasetManifest {
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self> {
        let mut m: DatasetManifest =
            toml::from_str(text).map_err(|e| Error::Manifest(e.to_string()))?;
        m.base_dir = base_dir.to_path_buf();
        m.validate()?;
        Ok(m)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base)
    }

    pub fn label_space(&self) -> Vec<FaultLabel> {
        self.labels.clone().unwrap_or_else(|| default_label_space(&self.dataset_id))
    }

    pub fn validate(&self) -> Result<()> {
        let space = self.label_space();
        let mut seen = BTreeSet::new();
        for (i, e) in self.entries.iter().enumerate() {
            if !space.contains(&e.label) {
                return Err(Error::ManifestLabelError {
                    dataset: self.dataset_id.clone(),
                    label: e.label,
                });
            }
            if !seen.insert((e.path.clone(), e.channel.clone())) {
                return Err(Error::Manifest(format!(
                    "entry {i}: duplicate file/channel {}#{}",
                    e.path.display(),
                    e.channel.as_deref().unwrap_or("")
                )));
            }
        }
        Ok(())
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    fn load_entry(&self, index: usize, e: &ManifestEntry) -> Result<Signal> {
        let path = self.resolve(&e.path);
        let meta = SignalMeta {
            id: format!("{}/{}", self.dataset_id, index),
            dataset_id: self.dataset_id.clone(),
            condition_id: e.condition.clone(),
            label: e.label,
        };
        let format = e
            .format
            .or_else(|| FileFormat::from_extension(&path))
            .ok_or_else(|| Error::Manifest(format!("cannot infer format of {}", path.display())))?;
        match format {
            FileFormat::Csv => {
                let col = e.channel.as_deref().map(ColumnRef::parse).unwrap_or(ColumnRef::Index(0));
                load_csv(&path, &col, e.sample_rate_hz, meta)
            }
            FileFormat::Raw => load_raw(&path, e.dtype, e.byte_order, e.sample_rate_hz, meta),
            FileFormat::Mat => {
                let var = e
                    .channel
                    .as_deref()
                    .ok_or_else(|| Error::Manifest("MAT entries need a channel (variable name)".into()))?;
                load_mat_v5(&path, var, e.sample_rate_hz, meta)
            }
        }
    }
}

/// Signals of one manifest, in entry order.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedDataset {
    pub dataset_id: String,
    pub labels: Vec<FaultLabel>,
    pub signals: Vec<Signal>,
}

/// Load every entry; all failures are collected with their entry index.
pub fn load_manifest(path: &Path) -> Result<LoadedDataset> {
    let manifest = DatasetManifest::load(path)?;
    load_dataset(&manifest)
}

pub fn load_dataset(manifest: &DatasetManifest) -> Result<LoadedDataset> {
    if manifest.entries.is_empty() {
        log::warn!("manifest for {} has no entries", manifest.dataset_id);
    }
    let mut signals = Vec::with_capacity(manifest.entries.len());
    let mut errors = Vec::new();
    for (i, e) in manifest.entries.iter().enumerate() {
        match manifest.load_entry(i, e) {
            Ok(s) => signals.push(s),
            Err(err) => errors.push((i, err)),
        }
    }
    if !errors.is_empty() {
        return Err(Error::ManifestEntries(errors));
    }
    Ok(LoadedDataset {
        dataset_id: manifest.dataset_id.clone(),
        labels: manifest.label_space(),
        signals,
    })
}
