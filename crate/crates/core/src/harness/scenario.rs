use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::human::{HumanModel, NoiseModel};
use super::ScenarioError;
use crate::intent::{Intent, Polarity, RuleBasedBackend, TaskLexicon};
use crate::robot::{RecoveryBehavior, RobotAction, RobotScript};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorKind {
    Physical,
    Conceptual,
}

impl ErrorKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ErrorKind::Physical => "physical",
            ErrorKind::Conceptual => "conceptual",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InjectedError {
    pub error_id: String,
    pub kind: ErrorKind,
    /// Id of the action whose start is the error occurrence.
    pub action: String,
}

fn default_tail() -> u64 {
    15_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub schema: u32,
    pub task: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub actions: Vec<RobotAction>,
    #[serde(default)]
    pub errors: Vec<InjectedError>,
    #[serde(default)]
    pub human: HumanModel,
    #[serde(default)]
    pub noise: NoiseModel,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub recovery: RecoveryBehavior,
    /// How long the run continues after the script ends.
    #[serde(default = "default_tail")]
    pub tail_millis: u64,
}

/// Renders a deserializer path as a JSON pointer.
pub(crate) fn json_pointer(path: &serde_path_to_error::Path) -> String {
    use serde_path_to_error::Segment;
    let mut out = String::new();
    for seg in path.iter() {
        out.push('/');
        match seg {
            Segment::Seq { index } => out.push_str(&index.to_string()),
            Segment::Map { key } => out.push_str(&key.replace('~', "~0").replace('/', "~1")),
            Segment::Enum { variant } => out.push_str(variant),
            Segment::Unknown => out.push('?'),
        }
    }
    out
}

fn invalid(pointer: impl Into<String>, message: impl Into<String>) -> ScenarioError {
    ScenarioError::Invalid { pointer: pointer.into(), message: message.into() }
}

impl Scenario {
    pub fn from_json(json: &str) -> Result<Self, ScenarioError> {
        let mut de = serde_json::Deserializer::from_str(json);
        let scenario: Scenario = serde_path_to_error::deserialize(&mut de)
            .map_err(|e| ScenarioError::Schema { pointer: json_pointer(e.path()), message: e.inner().to_string() })?;
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ScenarioError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| ScenarioError::Io { path: path.display().to_string(), source: e })?;
        let mut scenario = Self::from_json(&text)?;
        if scenario.name.is_none() {
            scenario.name = path.file_stem().map(|s| s.to_string_lossy().into_owned());
        }
        Ok(scenario)
    }

    pub fn label(&self) -> &str {
        self.name.as_deref().unwrap_or(&self.task)
    }

    pub fn script(&self) -> RobotScript {
        RobotScript::new(self.actions.clone()).expect("validated scenario")
    }

    pub fn lexicon(&self) -> TaskLexicon {
        TaskLexicon::builtin(&self.task).expect("validated scenario")
    }

    pub fn perceives(&self, error_id: &str) -> bool {
        self.human.perceives_error.get(error_id).copied().unwrap_or(true)
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        if self.schema != SCHEMA_VERSION {
            return Err(invalid("/schema", format!("unsupported schema {}, expected {SCHEMA_VERSION}", self.schema)));
        }
        let lexicon = TaskLexicon::builtin(&self.task)
            .ok_or_else(|| invalid("/task", format!("unknown task {:?}", self.task)))?;
        RobotScript::new(self.actions.clone())
            .map_err(|e| invalid(format!("/actions/{}", e.index()), e.to_string()))?;

        let actions: BTreeMap<&str, &RobotAction> = self.actions.iter().map(|a| (a.id.as_str(), a)).collect();
        let mut ids = BTreeSet::new();
        for (i, err) in self.errors.iter().enumerate() {
            if !ids.insert(err.error_id.as_str()) {
                return Err(invalid(format!("/errors/{i}/error_id"), format!("duplicate error id {}", err.error_id)));
            }
            let Some(action) = actions.get(err.action.as_str()) else {
                return Err(ScenarioError::DanglingAnchor { error_id: err.error_id.clone(), action: err.action.clone() });
            };
            if action.is_error.as_deref() != Some(err.error_id.as_str()) {
                return Err(invalid(
                    format!("/errors/{i}/action"),
                    format!("action {} is not marked is_error = {}", err.action, err.error_id),
                ));
            }
        }
        for (i, a) in self.actions.iter().enumerate() {
            if let Some(id) = &a.is_error {
                if !ids.contains(id.as_str()) {
                    return Err(invalid(format!("/actions/{i}/is_error"), format!("no injected error named {id}")));
                }
            }
        }
        for id in self.human.perceives_error.keys() {
            if !ids.contains(id.as_str()) {
                return Err(invalid(format!("/human/perceives_error/{id}"), "unknown error id"));
            }
        }
        if self.recovery.duration_millis == 0 {
            return Err(invalid("/recovery/duration_millis", "must be positive"));
        }
        self.human.validate().map_err(|(p, m)| invalid(format!("/human{p}"), m))?;
        self.noise.validate().map_err(|(p, m)| invalid(format!("/noise{p}"), m))?;
        self.check_texts(&RuleBasedBackend::new(lexicon))
    }

    /// Scripted human lines must read the way they are meant to.
    fn check_texts(&self, rules: &RuleBasedBackend) -> Result<(), ScenarioError> {
        let h = &self.human;
        for err in &self.errors {
            let id = &err.error_id;
            if h.speech_reaction.probability > 0.0 {
                let text = h.speech_reaction.text_for(id);
                if !matches!(rules.classify_text(text, false), Intent::ImplicitErrorReaction { .. }) {
                    return Err(invalid(
                        "/human/speech_reaction",
                        format!("{text:?} for {id} is not recognized as an error reaction"),
                    ));
                }
            }
            if h.explicit_report.probability > 0.0 {
                let text = h.explicit_report.text_for(id);
                if !matches!(rules.classify_text(text, false), Intent::ExplicitErrorReport { .. }) {
                    return Err(invalid(
                        "/human/explicit_report",
                        format!("{text:?} for {id} is not recognized as an explicit error report"),
                    ));
                }
            }
        }
        for (field, text, want) in [
            ("/human/affirmative_text", &h.affirmative_text, Polarity::Affirmative),
            ("/human/negative_text", &h.negative_text, Polarity::Negative),
        ] {
            if rules.polarity_of_response(text) != want {
                return Err(invalid(field, format!("{text:?} does not read as {want:?}")));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "schema": 1,
        "task": "assembly",
        "actions": [
            {"id": "reach", "start": 0, "duration_millis": 2000, "moving": true},
            {"id": "grasp", "start": 2000, "duration_millis": 2000, "moving": true, "is_error": "slip"}
        ],
        "errors": [{"error_id": "slip", "kind": "physical", "action": "grasp"}],
        "human": {"explicit_report": {
            "latency_millis": 5000, "probability": 1.0, "text": "You made a mistake, you dropped the pipe."
        }}
    }"#;

    #[test]
    fn minimal_scenario_loads() {
        let s = Scenario::from_json(MINIMAL).unwrap();
        assert_eq!(s.errors.len(), 1);
        assert!(s.perceives("slip"));
        assert_eq!(s.tail_millis, 15_000);
    }

    #[test]
    fn schema_errors_carry_a_pointer() {
        let bad = MINIMAL.replace(r#""duration_millis": 2000, "moving": true}"#, r#""duration_millis": "x", "moving": true}"#);
        match Scenario::from_json(&bad).unwrap_err() {
            ScenarioError::Schema { pointer, .. } => assert_eq!(pointer, "/actions/0/duration_millis"),
            other => panic!("unexpected {other}"),
        }
        let unknown = MINIMAL.replace(r#""schema": 1,"#, r#""schema": 1, "bogus": true,"#);
        assert!(matches!(Scenario::from_json(&unknown), Err(ScenarioError::Schema { .. })));
    }

    #[test]
    fn dangling_anchor_is_its_own_error() {
        let bad = MINIMAL.replace(r#""action": "grasp""#, r#""action": "nowhere""#);
        assert!(matches!(
            Scenario::from_json(&bad),
            Err(ScenarioError::DanglingAnchor { ref action, .. }) if action == "nowhere"
        ));
    }

    #[test]
    fn anchor_must_be_flagged() {
        let bad = MINIMAL.replace(r#", "is_error": "slip""#, "");
        assert!(matches!(Scenario::from_json(&bad), Err(ScenarioError::Invalid { .. })));
    }

    #[test]
    fn report_text_must_classify_as_report() {
        let bad = MINIMAL.replace("You made a mistake, you dropped the pipe.", "that was odd");
        match Scenario::from_json(&bad).unwrap_err() {
            ScenarioError::Invalid { pointer, .. } => assert_eq!(pointer, "/human/explicit_report"),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn wrong_schema_version() {
        let bad = MINIMAL.replace(r#""schema": 1"#, r#""schema": 2"#);
        assert!(matches!(Scenario::from_json(&bad), Err(ScenarioError::Invalid { ref pointer, .. }) if pointer == "/schema"));
    }
}
