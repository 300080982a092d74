use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::text::{normalize, phrase_tokens};
use super::IntentError;

/// One requestable robot action and how to spot it in an utterance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActionPattern {
    pub name: String,
    pub verbs: Vec<String>,
    pub objects: Vec<String>,
    #[serde(default)]
    pub parameters: BTreeMap<String, Vec<String>>,
    /// Parameters that must be present for the request to count.
    #[serde(default)]
    pub required: Vec<String>,
}

/// Per-task vocabulary for the rule-based classifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskLexicon {
    pub task_name: String,
    pub action_verbs: BTreeSet<String>,
    pub object_vocabulary: BTreeSet<String>,
    pub error_report_markers: BTreeSet<String>,
    pub reaction_markers: BTreeSet<String>,
    pub affirmative_markers: BTreeSet<String>,
    pub negative_markers: BTreeSet<String>,
    #[serde(default)]
    pub actions: Vec<ActionPattern>,
}

const ASSEMBLY: &str = include_str!(concat!(env!("CARGO_MANIFEST_DIR"), "/../../lexicons/assembly.json"));
const PACKING: &str = include_str!(concat!(env!("CARGO_MANIFEST_DIR"), "/../../lexicons/packing.json"));

impl TaskLexicon {
    pub fn from_json(json: &str) -> Result<Self, IntentError> {
        let lexicon: TaskLexicon = serde_json::from_str(json)?;
        lexicon.validate()?;
        Ok(lexicon)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, IntentError> {
        let text = std::fs::read_to_string(path.as_ref())
            .map_err(|e| IntentError::Io { path: path.as_ref().display().to_string(), source: e })?;
        Self::from_json(&text)
    }

    /// Shipped lexicons, by task name.
    pub fn builtin(task: &str) -> Option<Self> {
        let json = match task {
            "assembly" => ASSEMBLY,
            "packing" => PACKING,
            _ => return None,
        };
        Some(Self::from_json(json).expect("shipped lexicon is valid"))
    }

    pub fn validate(&self) -> Result<(), IntentError> {
        let sets = [
            ("error_report_markers", &self.error_report_markers),
            ("reaction_markers", &self.reaction_markers),
            ("affirmative_markers", &self.affirmative_markers),
            ("negative_markers", &self.negative_markers),
        ];
        let mut seen: BTreeMap<String, &str> = BTreeMap::new();
        for (name, set) in sets {
            for phrase in set {
                let norm = normalize(phrase);
                if norm.is_empty() {
                    return Err(IntentError::InvalidLexicon(format!("{name} contains an empty phrase")));
                }
                if let Some(other) = seen.get(&norm) {
                    if *other != name {
                        return Err(IntentError::InvalidLexicon(format!(
                            "marker {norm:?} appears in both {other} and {name}"
                        )));
                    }
                }
                seen.insert(norm, name);
            }
        }
        let verbs: BTreeSet<String> = self.action_verbs.iter().map(|v| normalize(v)).collect();
        let objects: BTreeSet<String> = self.object_vocabulary.iter().map(|v| normalize(v)).collect();
        for a in &self.actions {
            if let Some(v) = a.verbs.iter().find(|v| !verbs.contains(&normalize(v))) {
                return Err(IntentError::InvalidLexicon(format!("action {} uses verb {v:?} not in action_verbs", a.name)));
            }
            if let Some(o) = a.objects.iter().find(|o| !objects.contains(&normalize(o))) {
                return Err(IntentError::InvalidLexicon(format!(
                    "action {} uses object {o:?} not in object_vocabulary",
                    a.name
                )));
            }
            if let Some(r) = a.required.iter().find(|r| !a.parameters.contains_key(*r)) {
                return Err(IntentError::InvalidLexicon(format!("action {} requires unknown parameter {r:?}", a.name)));
            }
        }
        Ok(())
    }

    pub(crate) fn compiled(&self) -> CompiledLexicon {
        let list = |s: &BTreeSet<String>| phrase_tokens(&s.iter().cloned().collect::<Vec<_>>());
        let error = list(&self.error_report_markers);
        let reaction = list(&self.reaction_markers);
        let affirmative = list(&self.affirmative_markers);
        let negative = list(&self.negative_markers);
        let mut polarity = affirmative.clone();
        polarity.extend(negative.iter().cloned());
        CompiledLexicon {
            verbs: list(&self.action_verbs),
            objects: list(&self.object_vocabulary),
            error,
            reaction,
            affirmative_count: affirmative.len(),
            polarity,
            actions: self
                .actions
                .iter()
                .map(|a| CompiledAction {
                    name: a.name.clone(),
                    verbs: phrase_tokens(&a.verbs),
                    objects: phrase_tokens(&a.objects),
                    parameters: a
                        .parameters
                        .iter()
                        .map(|(k, vals)| (k.clone(), vals.clone(), phrase_tokens(vals)))
                        .collect(),
                    required: a.required.clone(),
                })
                .collect(),
        }
    }
}

/// Token-split form of a lexicon, built once per classifier.
#[derive(Debug, Clone)]
pub(crate) struct CompiledLexicon {
    pub verbs: Vec<Vec<String>>,
    pub objects: Vec<Vec<String>>,
    pub error: Vec<Vec<String>>,
    pub reaction: Vec<Vec<String>>,
    /// Affirmative phrases first, then negative ones.
    pub polarity: Vec<Vec<String>>,
    pub affirmative_count: usize,
    pub actions: Vec<CompiledAction>,
}

#[derive(Debug, Clone)]
pub(crate) struct CompiledAction {
    pub name: String,
    pub verbs: Vec<Vec<String>>,
    pub objects: Vec<Vec<String>>,
    pub parameters: Vec<(String, Vec<String>, Vec<Vec<String>>)>,
    pub required: Vec<String>,
}
