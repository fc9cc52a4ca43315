//! Deterministic prompt templates. These are golden-file tested, so any
//! byte-level change here is a deliberate protocol change.

use std::fmt::Write;

use crate::task::TaskSpec;
use crate::{LlmError, Result};

/// One generation call: anchor on `exemplar_text` (classified as
/// `exemplar_primary_pct`% primary) and ask for `k` utterances at
/// `target_primary_pct`% primary.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GenRequest {
    pub exemplar_text: String,
    pub exemplar_primary_pct: u8,
    pub target_primary_pct: u8,
    pub primary_class: String,
    pub secondary_class: String,
    pub k: usize,
}

impl GenRequest {
    pub fn new(
        exemplar_text: impl Into<String>,
        exemplar_primary_pct: u8,
        target_primary_pct: u8,
        primary_class: impl Into<String>,
        secondary_class: impl Into<String>,
        k: usize,
    ) -> Result<Self> {
        for (what, pct) in [
            ("exemplar", exemplar_primary_pct),
            ("target", target_primary_pct),
        ] {
            if !(1..=99).contains(&pct) {
                return Err(LlmError::InvalidRequest(format!(
                    "{what} percentage must be in [1, 99], got {pct}"
                )));
            }
        }
        if k == 0 {
            return Err(LlmError::InvalidRequest("k must be at least 1".into()));
        }
        Ok(GenRequest {
            exemplar_text: exemplar_text.into(),
            exemplar_primary_pct,
            target_primary_pct,
            primary_class: primary_class.into(),
            secondary_class: secondary_class.into(),
            k,
        })
    }
}

/// Task framing with numbered class definitions and three dash-prefixed
/// shots per class.
pub fn build_system_prompt(task: &TaskSpec) -> String {
    let mut out = String::from(
        "Consider the task of classifying between the following classes (along with some examples):\n",
    );
    for (i, (class, definition, shots)) in [
        (&task.class_a, &task.definition_a, &task.shots_a),
        (&task.class_b, &task.definition_b, &task.shots_b),
    ]
    .into_iter()
    .enumerate()
    {
        if i > 0 {
            out.push('\n');
        }
        let _ = writeln!(
            out,
            "{}. {class}, which is {definition}. Some examples of utterances include:",
            i + 1
        );
        for shot in shots {
            let _ = writeln!(out, "- {shot}");
        }
    }
    out.truncate(out.trim_end_matches('\n').len());
    out
}

pub fn build_generation_prompt(req: &GenRequest) -> String {
    format!(
        "An example {text} which belongs {p}% to {a} and {p_rest}% to {b} \
         (based on a classifier's categorization). Now I ask you act as that classifier \
         and based on this example, generate a diverse set of {k} short utterances where \
         each utterance belongs {q}% to {a} and {q_rest}% to {b}.",
        text = req.exemplar_text,
        p = req.exemplar_primary_pct,
        p_rest = 100 - req.exemplar_primary_pct,
        q = req.target_primary_pct,
        q_rest = 100 - req.target_primary_pct,
        a = req.primary_class,
        b = req.secondary_class,
        k = req.k,
    )
}

pub fn build_relabel_prompt(text: &str) -> String {
    format!(
        "Which class does the following utterance belong to? \
         Answer with exactly one class name.\n\nUtterance: {text}"
    )
}
