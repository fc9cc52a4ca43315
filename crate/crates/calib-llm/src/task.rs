use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{LlmError, Result};

/// A binary text-classification task: two class names, their prose
/// definitions, and exactly three example utterances per class. This is all
/// the grounding the generator gets.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub class_a: String,
    pub class_b: String,
    pub definition_a: String,
    pub definition_b: String,
    pub shots_a: Vec<String>,
    pub shots_b: Vec<String>,
}

impl TaskSpec {
    pub fn validate(&self) -> Result<()> {
        if self.class_a.is_empty() || self.class_b.is_empty() {
            return Err(LlmError::InvalidTask("class names must be non-empty".into()));
        }
        if self.class_a == self.class_b {
            return Err(LlmError::InvalidTask(format!(
                "class names must be distinct, both are {:?}",
                self.class_a
            )));
        }
        for (name, shots) in [(&self.class_a, &self.shots_a), (&self.class_b, &self.shots_b)] {
            if shots.len() != 3 {
                return Err(LlmError::InvalidTask(format!(
                    "{name} needs exactly 3 example shots, got {}",
                    shots.len()
                )));
            }
        }
        Ok(())
    }

    pub fn from_json(json: &str) -> Result<Self> {
        let task: TaskSpec = serde_json::from_str(json)
            .map_err(|e| LlmError::InvalidTask(format!("bad task JSON: {e}")))?;
        task.validate()?;
        Ok(task)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn has_class(&self, name: &str) -> bool {
        name == self.class_a || name == self.class_b
    }

    /// The class that is not `name`, if `name` is one of the two.
    pub fn other_class(&self, name: &str) -> Option<&str> {
        if name == self.class_a {
            Some(&self.class_b)
        } else if name == self.class_b {
            Some(&self.class_a)
        } else {
            None
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tc() -> TaskSpec {
        TaskSpec::load(concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/task_tc.json")).unwrap()
    }

    #[test]
    fn fixture_tasks_load_and_validate() {
        for name in ["task_tc.json", "task_b77.json", "task_se.json"] {
            let path = format!("{}/fixtures/{name}", env!("CARGO_MANIFEST_DIR"));
            let task = TaskSpec::load(&path).unwrap();
            assert_eq!(task.shots_a.len(), 3);
            assert_eq!(task.shots_b.len(), 3);
            assert_ne!(task.class_a, task.class_b);
        }
    }

    #[test]
    fn shot_count_is_enforced() {
        let mut task = tc();
        task.shots_b.pop();
        assert!(matches!(task.validate(), Err(LlmError::InvalidTask(_))));
        task.shots_b.extend(["x".into(), "y".into()]);
        assert!(task.validate().is_err());
    }

    #[test]
    fn class_names_must_differ() {
        let mut task = tc();
        task.class_b = task.class_a.clone();
        assert!(task.validate().is_err());
    }

    #[test]
    fn other_class_is_symmetric() {
        let task = tc();
        assert_eq!(task.other_class(&task.class_a), Some(task.class_b.as_str()));
        assert_eq!(task.other_class(&task.class_b), Some(task.class_a.as_str()));
        assert_eq!(task.other_class("nope"), None);
        assert!(task.has_class(&task.class_a) && !task.has_class("nope"));
    }
}
