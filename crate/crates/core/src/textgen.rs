//! Textual fine-tuning records built from feature vectors.
//!
//! Each record carries the four keys `instruction`, `input`, `output` and
//! `history`, in that order. Corpora are written one JSON object per line.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{FeatureVector, N_FEATURES};
use crate::signal::FaultLabel;

pub const PLACEHOLDER: &str = "{value}";
const KEYS: [&str; 4] = ["instruction", "input", "output", "history"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FinetuneRecord {
    pub instruction: String,
    pub input: String,
    pub output: String,
    pub history: Vec<(String, String)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub instruction_text: String,
    /// One phrase per feature, p1 first, each containing `{value}` once.
    pub feature_phrases: Vec<String>,
    pub label_phrases: BTreeMap<FaultLabel, String>,
    /// Substituted for undefined features.
    pub undefined_phrase: String,
    pub separator: String,
    pub terminator: String,
    pub significant_digits: usize,
}

impl Default for PromptTemplate {
    fn default() -> Self {
        let time = [
            "mean",
            "standard deviation",
            "square root amplitude",
            "absolute mean",
            "peak value",
            "skewness",
            "kurtosis",
            "variance",
            "kurtosis index",
            "peak index",
            "waveform index",
            "pulse index",
        ];
        let freq = [
            "mean",
            "variance",
            "skewness",
            "kurtosis",
            "gravity frequency",
            "standard deviation",
            "root mean square",
            "average frequency",
            "regularity degree",
            "variation parameter",
            "eighth-order moment",
            "sixteenth-order moment",
        ];
        let mut phrases = Vec::with_capacity(N_FEATURES);
        for (i, name) in time.iter().enumerate() {
            phrases.push(if i == 0 {
                format!("The time-domain {name} of the vibration signal is {PLACEHOLDER}")
            } else {
                format!("the time-domain {name} is {PLACEHOLDER}")
            });
        }
        for (i, name) in freq.iter().enumerate() {
            phrases.push(if i == 0 {
                format!("The frequency-domain {name} is {PLACEHOLDER}")
            } else {
                format!("the frequency-domain {name} is {PLACEHOLDER}")
            });
        }
        let label_phrases = BTreeMap::from([
            (FaultLabel::Normal, "The diagnosis result is normal.".to_string()),
            (FaultLabel::InnerRace, "The diagnosis result is an inner ring fault.".to_string()),
            (FaultLabel::OuterRace, "The diagnosis result is an outer ring fault.".to_string()),
            (
                FaultLabel::RollingElement,
                "The diagnosis result is a rolling element fault.".to_string(),
            ),
        ]);
        PromptTemplate {
            instruction_text: "You are a bearing fault diagnosis expert. Based on the following \
                               features, you need to conduct fault diagnosis:"
                .to_string(),
            feature_phrases: phrases,
            label_phrases,
            undefined_phrase: "undefined".to_string(),
            separator: ", ".to_string(),
            terminator: ".".to_string(),
            significant_digits: 6,
        }
    }
}

impl PromptTemplate {
    pub fn validate(&self) -> Result<()> {
        if self.feature_phrases.len() != N_FEATURES {
            return Err(Error::TemplateIncomplete(format!(
                "expected {N_FEATURES} feature phrases, found {}",
                self.feature_phrases.len()
            )));
        }
        for (i, p) in self.feature_phrases.iter().enumerate() {
            let n = p.matches(PLACEHOLDER).count();
            if n != 1 {
                return Err(Error::TemplateIncomplete(format!(
                    "phrase for p{} has {n} {PLACEHOLDER} placeholders, expected 1",
                    i + 1
                )));
            }
        }
        if self.significant_digits == 0 {
            return Err(Error::TemplateIncomplete("significant_digits must be positive".into()));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let tpl: PromptTemplate = serde_json::from_str(&text)
            .map_err(|e| Error::TemplateIncomplete(format!("{}: {e}", path.display())))?;
        tpl.validate()?;
        Ok(tpl)
    }
}

/// Format with `digits` significant digits. Fixed notation when the rounded
/// value lies in `[1e-3, 1e6)`, scientific (`1.23457e-5`) otherwise.
pub fn format_value(v: f64, digits: usize) -> String {
    if !v.is_finite() {
        return v.to_string();
    }
    let digits = digits.max(1);
    let sci = format!("{:.*e}", digits - 1, v);
    let exp: i32 = sci
        .rsplit_once('e')
        .and_then(|(_, e)| e.parse().ok())
        .unwrap_or(0);
    if v != 0.0 && (-3..6).contains(&exp) {
        let decimals = (digits as i32 - 1 - exp).max(0) as usize;
        format!("{:.*}", decimals, v)
    } else {
        sci
    }
}

pub fn render_record(
    fv: &FeatureVector,
    label: FaultLabel,
    tpl: &PromptTemplate,
) -> Result<FinetuneRecord> {
    tpl.validate()?;
    let output = tpl
        .label_phrases
        .get(&label)
        .ok_or_else(|| Error::TemplateIncomplete(format!("no output phrase for label {label}")))?
        .clone();
    let parts: Vec<String> = tpl
        .feature_phrases
        .iter()
        .enumerate()
        .map(|(i, phrase)| {
            let value = match fv.p(i + 1) {
                Some(v) => format_value(v, tpl.significant_digits),
                None => tpl.undefined_phrase.clone(),
            };
            phrase.replace(PLACEHOLDER, &value)
        })
        .collect();
    let mut input = parts.join(&tpl.separator);
    input.push_str(&tpl.terminator);
    Ok(FinetuneRecord {
        instruction: tpl.instruction_text.clone(),
        input,
        output,
        history: Vec::new(),
    })
}

pub fn record_to_line(rec: &FinetuneRecord) -> String {
    serde_json::to_string(rec).expect("record serialisation is infallible")
}

pub fn write_corpus<W: Write>(mut out: W, records: &[FinetuneRecord]) -> std::io::Result<usize> {
    for rec in records {
        out.write_all(record_to_line(rec).as_bytes())?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(records.len())
}

/// Write `records` to `path`, one per line. Returns the count written.
pub fn emit_corpus(records: &[FinetuneRecord], path: &Path) -> Result<usize> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_corpus(BufWriter::new(file), records).map_err(|e| Error::io(path, e))
}

/// Parse one corpus line; `line_no` is 1-based and only used for errors.
pub fn parse_line(line: &str, line_no: usize) -> Result<FinetuneRecord> {
    let malformed = |reason: String| Error::MalformedLine {
        line: line_no,
        reason,
    };
    let value: serde_json::Value =
        serde_json::from_str(line).map_err(|e| malformed(e.to_string()))?;
    let obj = value
        .as_object()
        .ok_or_else(|| malformed("record is not an object".into()))?;
    for key in KEYS {
        if !obj.contains_key(key) {
            return Err(Error::MissingKey {
                line: line_no,
                key: key.to_string(),
            });
        }
    }
    if let Some(extra) = obj.keys().find(|k| !KEYS.contains(&k.as_str())) {
        return Err(malformed(format!("unexpected key {extra:?}")));
    }
    serde_json::from_value(value).map_err(|e| malformed(e.to_string()))
}

pub fn read_corpus<R: BufRead>(reader: R) -> Result<Vec<FinetuneRecord>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::MalformedLine {
            line: i + 1,
            reason: e.to_string(),
        })?;
        out.push(parse_line(&line, i + 1)?);
    }
    Ok(out)
}

pub fn parse_corpus(path: &Path) -> Result<Vec<FinetuneRecord>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_corpus(BufReader::new(file))
}
