//! Line-delimited JSON exchange records. See `docs/exchange-format.md`.

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use piiqa_core::model::{ModelError, Registry, Span, SpanAnnotation};

pub const FORMAT: &str = "piiqa-exchange";
pub const VERSION: u32 = 1;

/// One annotation on the wire. Offsets count Unicode scalar values,
/// `end` is exclusive.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WireAnnotation {
    pub start: usize,
    pub end: usize,
    #[serde(rename = "type")]
    pub label: String,
    pub text: String,
}

impl WireAnnotation {
    pub fn from_core(a: &SpanAnnotation) -> Self {
        WireAnnotation {
            start: a.span.start,
            end: a.span.end,
            label: a.pii_type.to_string(),
            text: a.text.clone(),
        }
    }

    /// Resolve the label to its canonical type. Bounds and text are checked
    /// separately against the prompt.
    pub fn to_core(&self, registry: &Registry) -> Result<SpanAnnotation, ModelError> {
        Ok(SpanAnnotation::new(
            Span::new(self.start, self.end),
            registry.canonical_type(&self.label)?,
            self.text.clone(),
        ))
    }
}

pub fn wire_annotations(anns: &[SpanAnnotation]) -> Vec<WireAnnotation> {
    anns.iter().map(WireAnnotation::from_core).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeaderRecord {
    pub format: String,
    pub version: u32,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

impl Default for HeaderRecord {
    fn default() -> Self {
        HeaderRecord {
            format: FORMAT.to_string(),
            version: VERSION,
            extra: Map::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskRecord {
    pub id: String,
    pub locale: String,
    pub phase: String,
    pub domain: String,
    pub prompt: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub status: Option<String>,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubmissionRecord {
    pub id: String,
    pub task_id: String,
    pub annotator: String,
    pub annotations: Vec<WireAnnotation>,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthRecord {
    pub task_id: String,
    pub annotations: Vec<WireAnnotation>,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewRecord {
    pub task_id: String,
    pub reviewer: String,
    pub chosen_submission: String,
    pub ground_truth: Vec<WireAnnotation>,
    pub error_categories: Vec<String>,
    pub verdict: String,
    pub reviewed_at: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub request_id: Option<String>,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Record {
    Header(HeaderRecord),
    Task(TaskRecord),
    Submission(SubmissionRecord),
    GroundTruth(GroundTruthRecord),
    Review(ReviewRecord),
}

#[derive(Serialize)]
struct Tagged<'a, T> {
    kind: &'static str,
    #[serde(flatten)]
    body: &'a T,
}

fn body<T: DeserializeOwned>(map: Map<String, Value>) -> Result<T, String> {
    serde_json::from_value(Value::Object(map)).map_err(|e| e.to_string())
}

impl Record {
    pub fn kind(&self) -> &'static str {
        match self {
            Record::Header(_) => "header",
            Record::Task(_) => "task",
            Record::Submission(_) => "submission",
            Record::GroundTruth(_) => "ground_truth",
            Record::Review(_) => "review",
        }
    }

    /// Parse one line. Errors are schema violations described in text.
    pub fn parse(line: &str) -> Result<Record, String> {
        let value: Value = serde_json::from_str(line).map_err(|e| format!("not JSON: {e}"))?;
        let Value::Object(mut map) = value else {
            return Err("record is not a JSON object".into());
        };
        let kind = match map.remove("kind") {
            Some(Value::String(k)) => k,
            Some(_) => return Err("`kind` must be a string".into()),
            None => return Err("missing `kind`".into()),
        };
        match kind.as_str() {
            "header" => body(map).map(Record::Header),
            "task" => body(map).map(Record::Task),
            "submission" => body(map).map(Record::Submission),
            "ground_truth" => body(map).map(Record::GroundTruth),
            "review" => body(map).map(Record::Review),
            other => Err(format!("unknown record kind {other:?}")),
        }
    }

    /// Serialise as a single line without the trailing newline.
    pub fn to_line(&self) -> String {
        let kind = self.kind();
        let out = match self {
            Record::Header(b) => serde_json::to_string(&Tagged { kind, body: b }),
            Record::Task(b) => serde_json::to_string(&Tagged { kind, body: b }),
            Record::Submission(b) => serde_json::to_string(&Tagged { kind, body: b }),
            Record::GroundTruth(b) => serde_json::to_string(&Tagged { kind, body: b }),
            Record::Review(b) => serde_json::to_string(&Tagged { kind, body: b }),
        };
        out.expect("records serialise")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kind_comes_first_and_extras_survive() {
        let line = r#"{"kind":"task","id":"t1","locale":"pl-PL","phase":"pilot","domain":"finance","prompt":"x","batch":"b7"}"#;
        let rec = Record::parse(line).unwrap();
        let Record::Task(t) = &rec else { panic!() };
        assert_eq!(t.extra["batch"], "b7");
        assert_eq!(
            rec.to_line(),
            r#"{"kind":"task","id":"t1","locale":"pl-PL","phase":"pilot","domain":"finance","prompt":"x","batch":"b7"}"#
        );
    }

    #[test]
    fn schema_errors() {
        assert!(Record::parse("[1]").is_err());
        assert!(Record::parse(r#"{"id":"t"}"#).unwrap_err().contains("kind"));
        assert!(Record::parse(r#"{"kind":"nope"}"#).is_err());
        assert!(Record::parse(r#"{"kind":"submission","id":"s"}"#).is_err());
    }

    #[test]
    fn annotation_type_key() {
        let a = WireAnnotation {
            start: 0,
            end: 3,
            label: "CVV".into(),
            text: "123".into(),
        };
        assert_eq!(serde_json::to_string(&a).unwrap(), r#"{"start":0,"end":3,"type":"CVV","text":"123"}"#);
        let core = a.to_core(Registry::builtin()).unwrap();
        assert_eq!(core.pii_type.as_str(), "CREDIT DEBIT CVV");
    }
}
