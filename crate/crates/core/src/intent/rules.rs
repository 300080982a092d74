use std::collections::BTreeMap;

use super::lexicon::{CompiledAction, CompiledLexicon, TaskLexicon};
use super::text::{find_phrases, normalize, tokens};
use super::{Intent, IntentBackend, Polarity};
use crate::event::Utterance;

/// Tokens that flip a following affirmative phrase ("not fine").
const NEGATORS: &[&str] = &["not", "isnt", "arent", "wasnt", "dont", "doesnt", "didnt", "never", "hardly"];

/// How many tokens back a negator can sit from the phrase it negates.
const NEGATION_REACH: usize = 2;

/// Deterministic keyword classifier. The reference backend.
#[derive(Debug, Clone)]
pub struct RuleBasedBackend {
    lexicon: TaskLexicon,
    compiled: CompiledLexicon,
}

impl RuleBasedBackend {
    pub fn new(lexicon: TaskLexicon) -> Self {
        let compiled = lexicon.compiled();
        Self { lexicon, compiled }
    }

    pub fn lexicon(&self) -> &TaskLexicon {
        &self.lexicon
    }

    pub fn classify_text(&self, text: &str, query_pending: bool) -> Intent {
        let norm = normalize(text);
        let toks = tokens(&norm);
        let lex = &self.compiled;

        if query_pending {
            let (polarity, supplemental) = polarity_with_rest(&toks, lex);
            if polarity != Polarity::Unclear {
                return Intent::QueryResponse { polarity, supplemental };
            }
        }

        let error_markers = find_phrases(&toks, &lex.error);
        if !error_markers.is_empty() && has_definite_description(&toks, lex) {
            return Intent::ExplicitErrorReport { description: text.trim().to_owned() };
        }

        if let Some(intent) = lex.actions.iter().find_map(|a| match_action(&toks, a)) {
            return intent;
        }

        let reactions = find_phrases(&toks, &lex.reaction);
        if let Some(span) = reactions.first() {
            return Intent::ImplicitErrorReaction { marker: Some(lex.reaction[span.phrase].join(" ")) };
        }
        // an error word without a description of what went wrong is a reaction
        if let Some(span) = error_markers.first() {
            return Intent::ImplicitErrorReaction { marker: Some(lex.error[span.phrase].join(" ")) };
        }

        if query_pending {
            let rest = (!toks.is_empty()).then(|| toks.join(" "));
            return Intent::QueryResponse { polarity: Polarity::Unclear, supplemental: rest };
        }
        Intent::Irrelevant
    }

    pub fn polarity_of_response(&self, text: &str) -> Polarity {
        let norm = normalize(text);
        polarity_with_rest(&tokens(&norm), &self.compiled).0
    }
}

impl IntentBackend for RuleBasedBackend {
    fn classify(&self, u: &Utterance, query_pending: bool) -> Intent {
        self.classify_text(&u.text, query_pending)
    }

    fn name(&self) -> &str {
        "rules"
    }
}

/// Polarity from the first marker in the text, plus whatever follows the
/// leading run of markers as supplemental description.
fn polarity_with_rest(toks: &[&str], lex: &CompiledLexicon) -> (Polarity, Option<String>) {
    let spans = find_phrases(toks, &lex.polarity);
    let Some(first) = spans.first() else {
        return (Polarity::Unclear, None);
    };
    let polarity = if first.phrase < lex.affirmative_count {
        let from = first.start.saturating_sub(NEGATION_REACH);
        if toks[from..first.start].iter().any(|t| NEGATORS.contains(t)) {
            Polarity::Negative
        } else {
            Polarity::Affirmative
        }
    } else {
        Polarity::Negative
    };

    let mut end = first.end;
    for s in &spans[1..] {
        if s.start == end {
            end = s.end;
        } else {
            break;
        }
    }
    let rest = toks[end..].join(" ");
    (polarity, (!rest.is_empty()).then_some(rest))
}

fn has_definite_description(toks: &[&str], lex: &CompiledLexicon) -> bool {
    !find_phrases(toks, &lex.verbs).is_empty() && !find_phrases(toks, &lex.objects).is_empty()
}

fn match_action(toks: &[&str], action: &CompiledAction) -> Option<Intent> {
    if find_phrases(toks, &action.verbs).is_empty() || find_phrases(toks, &action.objects).is_empty() {
        return None;
    }
    let mut parameters = BTreeMap::new();
    for (name, values, phrases) in &action.parameters {
        if let Some(span) = find_phrases(toks, phrases).first() {
            parameters.insert(name.clone(), values[span.phrase].clone());
        }
    }
    if action.required.iter().any(|r| !parameters.contains_key(r)) {
        return None;
    }
    Some(Intent::ActionRequest { action: action.name.clone(), parameters })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::intent::Category;
    use proptest::prelude::*;

    fn assembly() -> RuleBasedBackend {
        RuleBasedBackend::new(TaskLexicon::builtin("assembly").unwrap())
    }

    fn packing() -> RuleBasedBackend {
        RuleBasedBackend::new(TaskLexicon::builtin("packing").unwrap())
    }

    #[test]
    fn explicit_report_example() {
        let text = "You made a mistake. You put the nuts in the office box instead of the food box.";
        assert_eq!(
            packing().classify_text(text, false),
            Intent::ExplicitErrorReport { description: text.into() }
        );
        // explicit outranks the unclear-response fallback while a query is pending
        assert_eq!(packing().classify_text(text, true).category(), Category::ExplicitErrorReport);
    }

    #[test]
    fn bare_reaction() {
        assert_eq!(
            assembly().classify_text("you missed it", false),
            Intent::ImplicitErrorReaction { marker: Some("you missed it".into()) }
        );
        assert_eq!(assembly().classify_text("drop it", false).category(), Category::ImplicitErrorReaction);
    }

    #[test]
    fn action_request_with_color() {
        let mut params = BTreeMap::new();
        params.insert("color".to_string(), "red".to_string());
        assert_eq!(
            assembly().classify_text("Can I have the red pipe?", false),
            Intent::ActionRequest { action: "give_pipe".into(), parameters: params }
        );
        // no color, no request
        assert_eq!(assembly().classify_text("Can I have a pipe?", false), Intent::Irrelevant);
    }

    #[test]
    fn negative_response_keeps_supplemental() {
        assert_eq!(
            assembly().classify_text("no, it grabbed the wrong one", true),
            Intent::QueryResponse { polarity: Polarity::Negative, supplemental: Some("it grabbed the wrong one".into()) }
        );
    }

    #[test]
    fn irrelevant_small_talk() {
        assert_eq!(assembly().classify_text("nice weather today", false), Intent::Irrelevant);
    }

    #[test]
    fn polarity_examples() {
        let b = assembly();
        assert_eq!(b.polarity_of_response("yes, all good"), Polarity::Affirmative);
        assert_eq!(b.polarity_of_response("no"), Polarity::Negative);
        assert_eq!(b.polarity_of_response("um, what?"), Polarity::Unclear);
        assert_eq!(b.polarity_of_response("everything is fine"), Polarity::Affirmative);
        assert_eq!(b.polarity_of_response("not really"), Polarity::Negative);
        assert_eq!(b.polarity_of_response("it's not fine"), Polarity::Negative);
        assert_eq!(b.polarity_of_response("Is everything going according to plan? Yes."), Polarity::Affirmative);
    }

    #[test]
    fn unclear_answer_while_pending() {
        assert_eq!(
            assembly().classify_text("um, what?", true),
            Intent::QueryResponse { polarity: Polarity::Unclear, supplemental: Some("um what".into()) }
        );
        assert_eq!(assembly().classify_text("um, what?", false), Intent::Irrelevant);
    }

    #[test]
    fn bare_error_word_is_a_reaction() {
        assert_eq!(
            assembly().classify_text("that's wrong", false),
            Intent::ImplicitErrorReaction { marker: Some("wrong".into()) }
        );
    }

    #[test]
    fn query_response_needs_pending_query() {
        assert_ne!(assembly().classify_text("yes", false).category(), Category::QueryResponse);
    }

    proptest! {
        #[test]
        fn classification_is_total_and_deterministic(text in "[a-zA-Z ,.!?']{0,60}", pending in any::<bool>()) {
            let b = assembly();
            let a = b.classify_text(&text, pending);
            prop_assert_eq!(&a, &b.classify_text(&text, pending));
            if !pending {
                prop_assert_ne!(a.category(), Category::QueryResponse);
            }
        }

        #[test]
        fn explicit_pattern_beats_reaction_marker(
            reaction in prop::sample::select(vec!["oops", "whoa", "you missed it", "uh oh", "hey"]),
            report in prop::sample::select(vec![
                "you made a mistake you gave me the blue pipe",
                "wrong you grabbed the red pipe",
                "thats an error you dropped the pipe",
            ]),
            reaction_first in any::<bool>(),
        ) {
            let text = if reaction_first { format!("{reaction} {report}") } else { format!("{report} {reaction}") };
            prop_assert_eq!(assembly().classify_text(&text, false).category(), Category::ExplicitErrorReport);
        }
    }
}
