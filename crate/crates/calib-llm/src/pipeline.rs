//! The two-stage pipeline. Stage one turns a generation spec into raw
//! utterances; stage two relabels each utterance and applies the mismatch
//! policy. The mock backend short-circuits both stages deterministically so
//! the flow runs offline; the relabel step needs to know the intended class,
//! which only exists at this level, hence no transport-level mock.

use std::io::Write;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use calib_core::targeting::{GenerationSpec, TrainingItem};

use crate::backend::{chat_complete, parallel_map, BackendConfig, BackendKind, ChatMessage};
use crate::prompt::{build_generation_prompt, build_relabel_prompt, build_system_prompt, GenRequest};
use crate::task::TaskSpec;
use crate::{LlmError, Result};

/// One generated utterance. Only {text, relabeled_class, source_bin,
/// spec_id} go to disk; the claimed percentage never reaches training data.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyntheticText {
    pub text: String,
    #[serde(skip)]
    pub claimed_primary_pct: Option<u8>,
    pub relabeled_class: Option<String>,
    pub source_bin: usize,
    pub spec_id: String,
    #[serde(skip)]
    pub expected_class: String,
}

/// What to do with texts whose relabeled class contradicts the spec.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MismatchPolicy {
    /// Drop them; every surviving text is confirmed on-class.
    Strict,
    /// Keep them with the contradicting label.
    Keep,
}

fn annotation_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(
            r"\s*\(\s*(\d{1,3})%\s*(?:to\s+)?[A-Za-z0-9_]+\s*(?:(?:,|and)\s*(\d{1,3})%\s*(?:to\s+)?[A-Za-z0-9_]+\s*)?\)\s*$",
        )
        .expect("annotation regex compiles")
    })
}

fn enumeration_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^\s*(?:\d+\s*[.)]\s*|[-*\u{2022}]\s+)").expect("enumeration regex compiles"))
}

fn strip_quotes(s: &str) -> &str {
    let s = s.trim();
    for (open, close) in [('"', '"'), ('\u{201c}', '\u{201d}'), ('\'', '\'')] {
        if s.len() >= 2 && s.starts_with(open) && s.ends_with(close) {
            return s[open.len_utf8()..s.len() - close.len_utf8()].trim();
        }
    }
    s
}

/// Lenient reply parsing: one utterance per line, numbered/bulleted lines
/// preferred when present, trailing "(Q% a, 100-Q% b)" annotations captured
/// and stripped, preamble lines ending in ':' ignored.
pub fn parse_utterances(reply: &str) -> Vec<(String, Option<u8>)> {
    struct Line {
        enumerated: bool,
        text: String,
        claimed: Option<u8>,
    }
    let mut lines = Vec::new();
    for raw in reply.lines() {
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.ends_with(':') {
            continue;
        }
        let (enumerated, rest) = match enumeration_regex().find(trimmed) {
            Some(m) => (true, &trimmed[m.end()..]),
            None => (false, trimmed),
        };
        let (rest, claimed) = match annotation_regex().captures(rest) {
            Some(caps) => {
                let pct = caps[1].parse::<u8>().ok().filter(|p| *p <= 100);
                let end = caps.get(0).expect("whole match").start();
                (&rest[..end], pct)
            }
            None => (rest, None),
        };
        let text = strip_quotes(rest).to_string();
        if !text.is_empty() {
            lines.push(Line {
                enumerated,
                text,
                claimed,
            });
        }
    }
    let any_enumerated = lines.iter().any(|l| l.enumerated);
    lines
        .into_iter()
        .filter(|l| l.enumerated || !any_enumerated)
        .map(|l| (l.text, l.claimed))
        .collect()
}

fn exemplar_text(record: &calib_core::PredictionRecord) -> Result<&str> {
    record.text.as_deref().ok_or_else(|| LlmError::MissingText {
        id: record.id.clone(),
    })
}

fn classes_for<'t>(spec: &GenerationSpec, task: &'t TaskSpec) -> Result<(String, &'t str)> {
    let primary = spec.dominant_class.clone();
    let secondary = task.other_class(&primary).ok_or_else(|| {
        LlmError::InvalidRequest(format!(
            "spec dominant class {primary:?} is not one of the task classes"
        ))
    })?;
    Ok((primary, secondary))
}

pub fn spec_id(spec: &GenerationSpec) -> String {
    format!("bin{}", spec.bin_index)
}

/// Stage one: produce `spec.sample_count` utterances for the spec, cycling
/// through its exemplars. Each HTTP call asks for `k` utterances; the mock
/// fabricates "<exemplar text> [variant i]" deterministically.
pub fn generate(
    spec: &GenerationSpec,
    task: &TaskSpec,
    backend: &BackendConfig,
    k: usize,
) -> Result<Vec<SyntheticText>> {
    task.validate()?;
    backend.validate()?;
    let (primary, secondary) = classes_for(spec, task)?;
    if spec.exemplars.is_empty() {
        return Err(LlmError::InvalidRequest(format!(
            "spec for bin {} has no exemplars",
            spec.bin_index
        )));
    }
    let id = spec_id(spec);
    let wrap = |text: String, claimed: Option<u8>| SyntheticText {
        text,
        claimed_primary_pct: claimed,
        relabeled_class: None,
        source_bin: spec.bin_index,
        spec_id: id.clone(),
        expected_class: primary.clone(),
    };

    match backend.kind {
        BackendKind::Mock => (0..spec.sample_count)
            .map(|i| {
                let exemplar = &spec.exemplars[i % spec.exemplars.len()];
                let text = format!("{} [variant {}]", exemplar_text(exemplar)?, i + 1);
                Ok(wrap(text, Some(spec.target_primary_pct)))
            })
            .collect(),
        BackendKind::Http => {
            let system = ChatMessage::system(build_system_prompt(task));
            let mut out = Vec::with_capacity(spec.sample_count);
            let mut round = 0usize;
            while out.len() < spec.sample_count {
                let exemplar = &spec.exemplars[round % spec.exemplars.len()];
                round += 1;
                let request = GenRequest::new(
                    exemplar_text(exemplar)?,
                    spec.source_primary_pct(),
                    spec.target_primary_pct,
                    primary.clone(),
                    secondary,
                    k,
                )?;
                let messages = [
                    system.clone(),
                    ChatMessage::user(build_generation_prompt(&request)),
                ];
                let reply = chat_complete(backend, &messages)?;
                let parsed = parse_utterances(&reply);
                if parsed.is_empty() {
                    return Err(LlmError::ParseFailure { raw: reply });
                }
                for (text, claimed) in parsed {
                    if out.len() == spec.sample_count {
                        break;
                    }
                    out.push(wrap(text, claimed));
                }
            }
            Ok(out)
        }
    }
}

/// Maps a relabel reply onto one of the two class names: exact match first,
/// then a whole-token scan. Ambiguous or unmatched replies are errors.
fn match_class(reply: &str, task: &TaskSpec) -> Result<String> {
    let normalized = reply.trim().trim_end_matches('.').to_lowercase();
    let a = task.class_a.to_lowercase();
    let b = task.class_b.to_lowercase();
    if normalized == a {
        return Ok(task.class_a.clone());
    }
    if normalized == b {
        return Ok(task.class_b.clone());
    }
    let tokens: Vec<&str> = normalized
        .split(|c: char| !(c.is_alphanumeric() || c == '_'))
        .filter(|t| !t.is_empty())
        .collect();
    let has_a = tokens.contains(&a.as_str());
    let has_b = tokens.contains(&b.as_str());
    match (has_a, has_b) {
        (true, false) => Ok(task.class_a.clone()),
        (false, true) => Ok(task.class_b.clone()),
        _ => Err(LlmError::UnparsableLabel { raw: reply.into() }),
    }
}

/// Stage two: ask the backend which class each text belongs to, record the
/// answer, and drop contradictions under [`MismatchPolicy::Strict`].
pub fn relabel(
    texts: Vec<SyntheticText>,
    task: &TaskSpec,
    backend: &BackendConfig,
    policy: MismatchPolicy,
) -> Result<Vec<SyntheticText>> {
    task.validate()?;
    backend.validate()?;
    let labeled: Vec<SyntheticText> = match backend.kind {
        BackendKind::Mock => texts
            .into_iter()
            .map(|mut t| {
                t.relabeled_class = Some(t.expected_class.clone());
                t
            })
            .collect(),
        BackendKind::Http => {
            let system = ChatMessage::system(build_system_prompt(task));
            let outcomes = parallel_map(texts, backend.max_parallel, |mut t| {
                let messages = [
                    system.clone(),
                    ChatMessage::user(build_relabel_prompt(&t.text)),
                ];
                let reply = chat_complete(backend, &messages)?;
                t.relabeled_class = Some(match_class(&reply, task)?);
                Ok(t)
            });
            outcomes.into_iter().collect::<Result<Vec<_>>>()?
        }
    };
    Ok(match policy {
        MismatchPolicy::Keep => labeled,
        MismatchPolicy::Strict => labeled
            .into_iter()
            .filter(|t| t.relabeled_class.as_deref() == Some(t.expected_class.as_str()))
            .collect(),
    })
}

/// generate then relabel for every spec, concatenated in spec order.
pub fn run_pipeline(
    specs: &[GenerationSpec],
    task: &TaskSpec,
    backend: &BackendConfig,
    k: usize,
    policy: MismatchPolicy,
) -> Result<Vec<SyntheticText>> {
    let mut out = Vec::new();
    for spec in specs {
        let generated = generate(spec, task, backend, k)?;
        out.extend(relabel(generated, task, backend, policy)?);
    }
    Ok(out)
}

/// Synthetic texts as training items. The claimed percentage annotation is
/// already stripped by parsing; ids are "syn-<spec_id>-<j>" with j counted
/// per spec.
pub fn to_training_items(texts: &[SyntheticText]) -> Vec<TrainingItem> {
    let mut per_spec = std::collections::HashMap::new();
    texts
        .iter()
        .map(|t| {
            let j = per_spec.entry(t.spec_id.clone()).or_insert(0usize);
            let id = format!("syn-{}-{}", t.spec_id, *j);
            *j += 1;
            TrainingItem {
                id,
                text: t.text.clone(),
                label: t
                    .relabeled_class
                    .clone()
                    .unwrap_or_else(|| t.expected_class.clone()),
            }
        })
        .collect()
}

/// JSON Lines: {text, relabeled_class, source_bin, spec_id} per row.
pub fn write_synthetic_jsonl(texts: &[SyntheticText], mut writer: impl Write) -> Result<()> {
    for text in texts {
        let line = serde_json::to_string(text)
            .map_err(|e| LlmError::MalformedResponse(e.to_string()))?;
        writeln!(writer, "{line}")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use calib_core::targeting::Quadrant;
    use calib_core::PredictionRecord;

    fn task() -> TaskSpec {
        TaskSpec::load(concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/task_tc.json")).unwrap()
    }

    fn spec(sample_count: usize) -> GenerationSpec {
        let exemplars = vec![
            PredictionRecord::new("e1", 0.72, "complaint").with_text("the app crashes daily"),
            PredictionRecord::new("e2", 0.78, "complaint").with_text("refund never arrived"),
        ];
        GenerationSpec {
            bin_index: 8,
            quadrant: Quadrant::HighOver,
            alpha: 0.1,
            source_confidence: 0.75,
            dominant_class: "complaint".into(),
            target_primary_pct: 65,
            target_secondary_pct: 35,
            sample_count,
            exemplars,
        }
    }

    #[test]
    fn parses_numbered_reply_with_annotations() {
        let reply = "Sure! Here are 3 short utterances:\n\
            1. Hey @UbisoftSupport, I'm still experiencing the jager glitch and it's really affecting my gameplay. Can you please fix it asap? (65% complaint, 35% not_complaint)\n\
            2. \"My order is three weeks late and nobody answers.\" (65% complaint, 35% not_complaint)\n\
            3. Is the store open on Sundays?";
        let parsed = parse_utterances(reply);
        assert_eq!(parsed.len(), 3);
        assert!(parsed[0].0.starts_with("Hey @UbisoftSupport"));
        assert!(parsed[0].0.ends_with("asap?"), "annotation not stripped: {}", parsed[0].0);
        assert_eq!(parsed[0].1, Some(65));
        assert_eq!(parsed[1].0, "My order is three weeks late and nobody answers.");
        assert_eq!(parsed[1].1, Some(65));
        assert_eq!(parsed[2].1, None);
    }

    #[test]
    fn parses_bullets_dashes_and_plain_lines() {
        let bullets = "- first one\n* second one\n\u{2022} third one";
        assert_eq!(parse_utterances(bullets).len(), 3);

        let plain = "just one utterance without any list markers";
        let parsed = parse_utterances(plain);
        assert_eq!(parsed.len(), 1);
        assert_eq!(parsed[0].0, plain);

        // once anything is enumerated, stray prose lines are preamble
        let mixed = "Here you go\n1. real item (85% age_limit and 15% to atm_support)";
        let parsed = parse_utterances(mixed);
        assert_eq!(parsed.len(), 1);
        assert_eq!(parsed[0].0, "real item");
        assert_eq!(parsed[0].1, Some(85));

        assert!(parse_utterances("").is_empty());
        assert!(parse_utterances("Here are the results:\n\n").is_empty());
    }

    #[test]
    fn mock_generate_is_deterministic_and_counts() {
        let backend = BackendConfig::mock();
        let out = generate(&spec(5), &task(), &backend, 3).unwrap();
        assert_eq!(out.len(), 5);
        assert_eq!(out[0].text, "the app crashes daily [variant 1]");
        assert_eq!(out[1].text, "refund never arrived [variant 2]");
        assert_eq!(out[2].text, "the app crashes daily [variant 3]");
        assert!(out.iter().all(|t| t.claimed_primary_pct == Some(65)));
        assert!(out.iter().all(|t| t.source_bin == 8 && t.spec_id == "bin8"));
        assert!(out.iter().all(|t| t.relabeled_class.is_none()));
        assert_eq!(out, generate(&spec(5), &task(), &backend, 3).unwrap());
    }

    #[test]
    fn generate_requires_usable_exemplars() {
        let backend = BackendConfig::mock();
        let mut s = spec(3);
        s.exemplars.clear();
        assert!(matches!(
            generate(&s, &task(), &backend, 3),
            Err(LlmError::InvalidRequest(_))
        ));
        let mut s = spec(3);
        s.exemplars = vec![PredictionRecord::new("no-text", 0.7, "complaint")];
        assert!(matches!(
            generate(&s, &task(), &backend, 3),
            Err(LlmError::MissingText { .. })
        ));
        let mut s = spec(3);
        s.dominant_class = "unknown".into();
        assert!(generate(&s, &task(), &backend, 3).is_err());
    }

    #[test]
    fn mock_relabel_confirms_the_expected_class() {
        let backend = BackendConfig::mock();
        let generated = generate(&spec(4), &task(), &backend, 3).unwrap();
        let relabeled = relabel(generated.clone(), &task(), &backend, MismatchPolicy::Strict).unwrap();
        assert_eq!(relabeled.len(), 4);
        assert!(relabeled
            .iter()
            .all(|t| t.relabeled_class.as_deref() == Some("complaint")));
        let kept = relabel(generated, &task(), &backend, MismatchPolicy::Keep).unwrap();
        assert_eq!(kept.len(), 4);
    }

    #[test]
    fn match_class_rules() {
        let task = task();
        assert_eq!(match_class("complaint", &task).unwrap(), "complaint");
        assert_eq!(match_class(" Complaint. ", &task).unwrap(), "complaint");
        assert_eq!(match_class("not_complaint", &task).unwrap(), "not_complaint");
        assert_eq!(
            match_class("This is a complaint about shipping", &task).unwrap(),
            "complaint"
        );
        // underscore names are whole tokens, not substrings
        assert_eq!(
            match_class("label: not_complaint", &task).unwrap(),
            "not_complaint"
        );
        assert!(match_class("complaint or not_complaint", &task).is_err());
        assert!(match_class("no idea", &task).is_err());
    }

    #[test]
    fn training_items_and_jsonl_schema() {
        let backend = BackendConfig::mock();
        let texts = run_pipeline(&[spec(3)], &task(), &backend, 3, MismatchPolicy::Strict).unwrap();
        let items = to_training_items(&texts);
        assert_eq!(items.len(), 3);
        assert_eq!(items[0].id, "syn-bin8-0");
        assert_eq!(items[2].id, "syn-bin8-2");
        assert!(items.iter().all(|i| i.label == "complaint"));
        assert!(items.iter().all(|i| !i.text.contains('%')));

        let mut buf = Vec::new();
        write_synthetic_jsonl(&texts, &mut buf).unwrap();
        let first_line = String::from_utf8(buf).unwrap().lines().next().unwrap().to_string();
        let v: serde_json::Value = serde_json::from_str(&first_line).unwrap();
        let obj = v.as_object().unwrap();
        let mut keys: Vec<_> = obj.keys().map(String::as_str).collect();
        keys.sort_unstable();
        assert_eq!(keys, ["relabeled_class", "source_bin", "spec_id", "text"]);
    }
}
