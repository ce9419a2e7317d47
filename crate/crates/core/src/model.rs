//! Record types and JSONL persistence.
//!
//! Input is UTF-8 JSON Lines, one [`PreferencePair`] per line. Annotated
//! output repeats every input field (unknown keys included) and appends the
//! fitted gap posterior and the uncertainty profile.
//!
//! Python's `json` module writes non-finite floats as bare `NaN` /
//! `Infinity` tokens. Those are accepted by the reader so the offending
//! sample can be reported by index instead of failing as a syntax error.

use std::collections::HashSet;
use std::io::{BufRead, Write};

use serde::{Deserialize, Deserializer, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::uncertainty::UncertaintyRecord;

/// Keys written by [`write_annotated`]. They are never treated as unknown
/// pass-through keys when a file is read back.
pub const ANNOTATION_KEYS: [&str; 9] = [
    "mu",
    "sigma",
    "mean_prob",
    "shannon",
    "epistemic",
    "aleatoric",
    "balent",
    "u",
    "clamped",
];

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("duplicate record id {0:?}")]
    DuplicateId(String),
    #[error("record {id:?}: non-finite {side} reward sample at index {index}")]
    InvalidSample { id: String, side: Side, index: usize },
    #[error("record {0:?}: gap_override needs a finite mu and a positive finite sigma")]
    InvalidOverride(String),
    #[error("record {0:?} has no gap source (no rejected samples, no override, no class baseline)")]
    Unresolvable(String),
    #[error("record {0:?}: annotation is incomplete or non-finite")]
    InvalidAnnotation(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Chosen,
    Rejected,
}

impl std::fmt::Display for Side {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Side::Chosen => "chosen",
            Side::Rejected => "rejected",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SourceClass {
    Expert,
    Suboptimal,
    #[default]
    Unlabeled,
}

impl SourceClass {
    pub fn is_unlabeled(&self) -> bool {
        matches!(self, SourceClass::Unlabeled)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GapOverride {
    pub mu: f64,
    pub sigma: f64,
}

/// One dataset record.
///
/// Texts are opaque provenance; all of the arithmetic in this crate uses the
/// reward samples (or the override) only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferencePair {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub instruction: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chosen_text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rejected_text: Option<String>,
    #[serde(default, skip_serializing_if = "SourceClass::is_unlabeled")]
    pub source_class: SourceClass,
    #[serde(
        default,
        deserialize_with = "de_samples",
        skip_serializing_if = "Vec::is_empty"
    )]
    pub reward_samples_chosen: Vec<f64>,
    #[serde(
        default,
        deserialize_with = "de_opt_samples",
        skip_serializing_if = "Option::is_none"
    )]
    pub reward_samples_rejected: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gap_override: Option<GapOverride>,
    /// Unknown keys, written back unchanged.
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

impl PreferencePair {
    pub fn new(id: impl Into<String>, chosen: Vec<f64>, rejected: Option<Vec<f64>>) -> Self {
        Self {
            id: id.into(),
            instruction: None,
            chosen_text: None,
            rejected_text: None,
            source_class: SourceClass::Unlabeled,
            reward_samples_chosen: chosen,
            reward_samples_rejected: rejected,
            gap_override: None,
            extra: Map::new(),
        }
    }

    pub fn has_rejected_samples(&self) -> bool {
        self.reward_samples_rejected
            .as_ref()
            .is_some_and(|r| !r.is_empty())
    }

    /// True for single-response (SFT) records whose gap is taken against a
    /// baseline reward.
    pub fn is_single_response(&self) -> bool {
        !self.has_rejected_samples() && self.gap_override.is_none()
    }

    fn validate(&self, require_gap_source: bool) -> Result<(), DatasetError> {
        let check = |samples: &[f64], side| {
            match samples.iter().position(|s| !s.is_finite()) {
                Some(index) => Err(DatasetError::InvalidSample {
                    id: self.id.clone(),
                    side,
                    index,
                }),
                None => Ok(()),
            }
        };
        check(&self.reward_samples_chosen, Side::Chosen)?;
        if let Some(r) = &self.reward_samples_rejected {
            check(r, Side::Rejected)?;
        }
        if let Some(o) = &self.gap_override {
            if !o.mu.is_finite() || !o.sigma.is_finite() || o.sigma <= 0.0 {
                return Err(DatasetError::InvalidOverride(self.id.clone()));
            }
        }
        if require_gap_source {
            let has_override = self.gap_override.is_some();
            let has_pair = self.has_rejected_samples() && !self.reward_samples_chosen.is_empty();
            let has_baseline =
                !self.source_class.is_unlabeled() && !self.reward_samples_chosen.is_empty();
            if !(has_override || has_pair || has_baseline) {
                return Err(DatasetError::Unresolvable(self.id.clone()));
            }
        }
        Ok(())
    }
}

/// Gaussian law of the reward gap `R_c - R_r`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GapPosterior {
    pub mu: f64,
    pub sigma: f64,
    /// Set when `sigma` was raised to the configured floor.
    pub clamped: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Error)]
#[error("invalid gap posterior: mu={mu}, sigma={sigma}")]
pub struct InvalidPosterior {
    pub mu: f64,
    pub sigma: f64,
}

impl GapPosterior {
    pub fn new(mu: f64, sigma: f64) -> Result<Self, InvalidPosterior> {
        if mu.is_finite() && sigma.is_finite() && sigma > 0.0 {
            Ok(Self {
                mu,
                sigma,
                clamped: false,
            })
        } else {
            Err(InvalidPosterior { mu, sigma })
        }
    }

    /// Builds a posterior with `sigma` raised to at least `sigma_min`.
    pub fn with_floor(mu: f64, sigma: f64, sigma_min: f64) -> Result<Self, InvalidPosterior> {
        if !mu.is_finite() || !(sigma.is_finite() && sigma >= 0.0) {
            return Err(InvalidPosterior { mu, sigma });
        }
        if sigma < sigma_min {
            Ok(Self {
                mu,
                sigma: sigma_min,
                clamped: true,
            })
        } else {
            Ok(Self {
                mu,
                sigma,
                clamped: false,
            })
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnnotatedRecord {
    pub pair: PreferencePair,
    pub posterior: GapPosterior,
    pub uncertainty: UncertaintyRecord,
}

/// Reads a dataset. Blank lines are skipped; every other line must be a
/// valid record with a usable gap source.
pub fn parse_dataset<R: BufRead>(reader: R) -> Result<Vec<PreferencePair>, DatasetError> {
    Ok(read_lines(reader, true)?
        .into_iter()
        .map(|(pair, _)| pair)
        .collect())
}

/// Like [`parse_dataset`] but without the gap-source requirement. Used for
/// synthetic files whose reward samples have not been drawn yet.
pub fn parse_records<R: BufRead>(reader: R) -> Result<Vec<PreferencePair>, DatasetError> {
    Ok(read_lines(reader, false)?
        .into_iter()
        .map(|(pair, _)| pair)
        .collect())
}

/// Reads the output of [`write_annotated`].
pub fn parse_annotated<R: BufRead>(reader: R) -> Result<Vec<AnnotatedRecord>, DatasetError> {
    read_lines(reader, true)?
        .into_iter()
        .map(|(pair, ann)| {
            let bad = || DatasetError::InvalidAnnotation(pair.id.clone());
            let num = |k: &str| ann.get(k).and_then(Value::as_f64).ok_or_else(bad);
            let posterior = GapPosterior {
                mu: num("mu")?,
                sigma: num("sigma")?,
                clamped: ann
                    .get("clamped")
                    .and_then(Value::as_bool)
                    .unwrap_or(false),
            };
            let uncertainty = UncertaintyRecord {
                mean_prob: num("mean_prob")?,
                shannon: num("shannon")?,
                epistemic: num("epistemic")?,
                aleatoric: num("aleatoric")?,
                balent: num("balent")?,
                u: num("u")?,
            };
            Ok(AnnotatedRecord {
                pair,
                posterior,
                uncertainty,
            })
        })
        .collect()
}

fn read_lines<R: BufRead>(
    reader: R,
    require_gap_source: bool,
) -> Result<Vec<(PreferencePair, Map<String, Value>)>, DatasetError> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let (pair, annotations) = parse_line(&line, line_no)?;
        if pair.id.is_empty() {
            return Err(DatasetError::Parse {
                line: line_no,
                message: "empty id".into(),
            });
        }
        pair.validate(require_gap_source)?;
        if !seen.insert(pair.id.clone()) {
            return Err(DatasetError::DuplicateId(pair.id));
        }
        out.push((pair, annotations));
    }
    Ok(out)
}

fn parse_line(
    line: &str,
    line_no: usize,
) -> Result<(PreferencePair, Map<String, Value>), DatasetError> {
    let parse_err = |e: serde_json::Error| DatasetError::Parse {
        line: line_no,
        message: e.to_string(),
    };
    let text = quote_nonfinite_tokens(line);
    let value: Value = serde_json::from_str(&text).map_err(parse_err)?;
    let Value::Object(mut map) = value else {
        return Err(DatasetError::Parse {
            line: line_no,
            message: "record is not a JSON object".into(),
        });
    };
    let mut annotations = Map::new();
    for key in ANNOTATION_KEYS {
        if let Some(v) = map.remove(key) {
            annotations.insert(key.to_string(), v);
        }
    }
    let pair = PreferencePair::deserialize(Value::Object(map)).map_err(parse_err)?;
    Ok((pair, annotations))
}

/// Rewrites bare `NaN`, `Infinity` and `-Infinity` tokens (outside string
/// literals) as JSON strings.
fn quote_nonfinite_tokens(line: &str) -> std::borrow::Cow<'_, str> {
    if !(line.contains("NaN") || line.contains("Infinity")) {
        return line.into();
    }
    let bytes = line.as_bytes();
    let mut out = String::with_capacity(line.len() + 8);
    let mut in_string = false;
    let mut escaped = false;
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        if in_string {
            if escaped {
                escaped = false;
            } else if c == b'\\' {
                escaped = true;
            } else if c == b'"' {
                in_string = false;
            }
        } else if c == b'"' {
            in_string = true;
        } else {
            let rest = &line[i..];
            let token = ["-Infinity", "Infinity", "NaN"]
                .into_iter()
                .find(|t| rest.starts_with(t));
            if let Some(t) = token {
                out.push('"');
                out.push_str(t);
                out.push('"');
                i += t.len();
                continue;
            }
        }
        // Multi-byte UTF-8 sequences only ever occur inside strings in valid
        // JSON, and copying byte-wise through `line[i..i+len]` keeps them whole.
        let len = utf8_len(c);
        out.push_str(&line[i..i + len]);
        i += len;
    }
    out.into()
}

fn utf8_len(first: u8) -> usize {
    match first {
        0x00..=0x7f => 1,
        0xc0..=0xdf => 2,
        0xe0..=0xef => 3,
        _ => 4,
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum RawSample {
    Num(f64),
    Token(String),
}

fn to_sample<E: serde::de::Error>(raw: RawSample) -> Result<f64, E> {
    match raw {
        RawSample::Num(x) => Ok(x),
        RawSample::Token(t) => match t.as_str() {
            "NaN" => Ok(f64::NAN),
            "Infinity" => Ok(f64::INFINITY),
            "-Infinity" => Ok(f64::NEG_INFINITY),
            other => Err(E::custom(format!("reward sample {other:?} is not a number"))),
        },
    }
}

fn de_samples<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
    Vec::<RawSample>::deserialize(d)?
        .into_iter()
        .map(to_sample)
        .collect()
}

fn de_opt_samples<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Vec<f64>>, D::Error> {
    Option::<Vec<RawSample>>::deserialize(d)?
        .map(|v| v.into_iter().map(to_sample).collect())
        .transpose()
}

/// Serializes a record as a JSON object, without annotation keys.
pub fn pair_to_object(pair: &PreferencePair) -> Map<String, Value> {
    let Value::Object(mut map) = serde_json::to_value(pair).expect("record serializes") else {
        unreachable!("records serialize to objects")
    };
    for key in ANNOTATION_KEYS {
        map.remove(key);
    }
    map
}

/// Writes plain records, one per line.
pub fn write_dataset<W: Write>(pairs: &[PreferencePair], mut sink: W) -> Result<(), DatasetError> {
    for pair in pairs {
        serde_json::to_writer(&mut sink, &Value::Object(pair_to_object(pair)))
            .map_err(std::io::Error::from)?;
        sink.write_all(b"\n")?;
    }
    sink.flush()?;
    Ok(())
}

pub fn write_annotated<W: Write>(
    records: &[AnnotatedRecord],
    mut sink: W,
) -> Result<(), DatasetError> {
    for rec in records {
        let u = &rec.uncertainty;
        let fields = [
            ("mu", rec.posterior.mu),
            ("sigma", rec.posterior.sigma),
            ("mean_prob", u.mean_prob),
            ("shannon", u.shannon),
            ("epistemic", u.epistemic),
            ("aleatoric", u.aleatoric),
            ("balent", u.balent),
            ("u", u.u),
        ];
        let mut map = pair_to_object(&rec.pair);
        for (key, value) in fields {
            let num = serde_json::Number::from_f64(value)
                .ok_or_else(|| DatasetError::InvalidAnnotation(rec.pair.id.clone()))?;
            map.insert(key.to_string(), Value::Number(num));
        }
        map.insert("clamped".into(), Value::Bool(rec.posterior.clamped));
        serde_json::to_writer(&mut sink, &Value::Object(map)).map_err(std::io::Error::from)?;
        sink.write_all(b"\n")?;
    }
    sink.flush()?;
    Ok(())
}
