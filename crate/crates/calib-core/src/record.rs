//! Scored predictions and how they get into the toolkit.
//!
//! Records arrive as JSON Lines (one object per line) or CSV with a header
//! row; both use the keys `id`, `score`, `true_label` and the optional
//! `text` / `predicted_label`.

use std::fs::File;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{CalibError, Result};

/// One scored prediction. `score` is the predicted probability of the
/// designated positive class; `true_label` / `predicted_label` are free-form
/// class names drawn from the task's two classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub id: String,
    pub score: f64,
    pub true_label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub predicted_label: Option<String>,
}

impl PredictionRecord {
    pub fn new(id: impl Into<String>, score: f64, true_label: impl Into<String>) -> Self {
        PredictionRecord {
            id: id.into(),
            score,
            true_label: true_label.into(),
            text: None,
            predicted_label: None,
        }
    }

    pub fn with_text(mut self, text: impl Into<String>) -> Self {
        self.text = Some(text.into());
        self
    }

    pub fn with_predicted_label(mut self, label: impl Into<String>) -> Self {
        self.predicted_label = Some(label.into());
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.score) || self.score.is_nan() {
            return Err(CalibError::InvalidScore {
                id: self.id.clone(),
                value: self.score,
            });
        }
        Ok(())
    }

    /// The label this record predicts: the explicit `predicted_label` if
    /// present, otherwise positive exactly when `score > 0.5`.
    pub fn is_correct(&self, positive_label: &str) -> bool {
        match &self.predicted_label {
            Some(p) => *p == self.true_label,
            None => (self.score > 0.5) == (self.true_label == positive_label),
        }
    }

    /// Probability of the record's max-probability class: max(s, 1 - s).
    pub fn max_prob(&self) -> f64 {
        self.score.max(1.0 - self.score)
    }
}

/// Reads JSON Lines. Blank lines are skipped; anything else must parse.
pub fn read_records_jsonl<R: BufRead>(reader: R) -> Result<Vec<PredictionRecord>> {
    let mut records = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: PredictionRecord = serde_json::from_str(&line)
            .map_err(|e| CalibError::Parse(format!("line {}: {}", lineno + 1, e)))?;
        records.push(rec);
    }
    Ok(records)
}

/// Reads CSV with a header row naming the record fields.
pub fn read_records_csv<R: Read>(reader: R) -> Result<Vec<PredictionRecord>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let mut records = Vec::new();
    for row in rdr.deserialize() {
        let rec: PredictionRecord = row.map_err(|e| CalibError::Parse(e.to_string()))?;
        records.push(rec);
    }
    Ok(records)
}

/// Dispatches on extension: `.csv` is CSV, everything else JSON Lines.
pub fn read_records_path(path: &Path) -> Result<Vec<PredictionRecord>> {
    let file = File::open(path)?;
    match path.extension().and_then(|e| e.to_str()) {
        Some("csv") => read_records_csv(file),
        _ => read_records_jsonl(BufReader::new(file)),
    }
}

/// Serialises records back to JSON Lines.
pub fn write_records_jsonl(records: &[PredictionRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("record serialises"));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jsonl_roundtrip_with_optional_fields() {
        let input = concat!(
            r#"{"id":"a","score":0.9,"true_label":"pos","text":"hello"}"#,
            "\n\n",
            r#"{"id":"b","score":0.2,"true_label":"neg","predicted_label":"neg"}"#,
            "\n",
        );
        let recs = read_records_jsonl(input.as_bytes()).unwrap();
        assert_eq!(recs.len(), 2);
        assert_eq!(recs[0].text.as_deref(), Some("hello"));
        assert_eq!(recs[1].predicted_label.as_deref(), Some("neg"));
        let out = write_records_jsonl(&recs);
        let again = read_records_jsonl(out.as_bytes()).unwrap();
        assert_eq!(recs, again);
    }

    #[test]
    fn csv_with_missing_optional_columns() {
        let input = "id,score,true_label\na,0.9,pos\nb,0.2,neg\n";
        let recs = read_records_csv(input.as_bytes()).unwrap();
        assert_eq!(recs.len(), 2);
        assert_eq!(recs[0].id, "a");
        assert_eq!(recs[1].score, 0.2);
        assert!(recs[0].text.is_none());
    }

    #[test]
    fn score_validation() {
        assert!(PredictionRecord::new("x", 1.5, "pos").validate().is_err());
        assert!(PredictionRecord::new("x", -0.1, "pos").validate().is_err());
        assert!(PredictionRecord::new("x", f64::NAN, "pos").validate().is_err());
        assert!(PredictionRecord::new("x", 0.0, "pos").validate().is_ok());
        assert!(PredictionRecord::new("x", 1.0, "pos").validate().is_ok());
    }

    #[test]
    fn default_predicted_label_rule() {
        let r = PredictionRecord::new("x", 0.7, "pos");
        assert!(r.is_correct("pos"));
        let r = PredictionRecord::new("x", 0.5, "pos");
        // score exactly 0.5 predicts the negative class
        assert!(!r.is_correct("pos"));
        let r = PredictionRecord::new("x", 0.5, "neg");
        assert!(r.is_correct("pos"));
        // explicit predicted_label wins over the score rule
        let r = PredictionRecord::new("x", 0.9, "pos").with_predicted_label("neg");
        assert!(!r.is_correct("pos"));
    }

    #[test]
    fn malformed_jsonl_reports_line() {
        let err = read_records_jsonl("not json\n".as_bytes()).unwrap_err();
        assert!(err.to_string().contains("line 1"));
    }
}
