//! A task suite with a planted textual shortcut, a blind prober that exploits
//! such shortcuts, and a rewriter that removes them.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::grammar::{parse_clause, render_event, Tense, ACTIONS, ACTORS, OBJECTS};
use crate::providers::{Backend, BackendError, ModelRequest, ModelResponse};
use crate::qa::{Dataset, DatasetVariant, QaTask, QuestionType};

const STOPWORDS: [&str; 17] = [
    "what", "did", "do", "does", "the", "a", "an", "with", "to", "of", "is", "was", "why", "how", "who",
    "where", "when",
];

fn content_words(text: &str) -> BTreeSet<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .map(str::to_lowercase)
        .filter(|w| !w.is_empty() && !STOPWORDS.contains(&w.as_str()))
        .collect()
}

/// Reads `A. text` lines.
pub(crate) fn parse_lettered(text: &str) -> Vec<(char, String)> {
    text.lines()
        .filter_map(|l| {
            let l = l.trim();
            let mut chars = l.chars();
            let letter = chars.next()?.to_ascii_uppercase();
            let rest = chars.as_str().strip_prefix('.').or_else(|| chars.as_str().strip_prefix(')'))?;
            letter.is_ascii_uppercase().then(|| (letter, rest.trim().to_string()))
        })
        .collect()
}

/// Answers blind questions with the option sharing the most content words
/// with the question; ties go to the earliest option.
pub struct LexicalBiasOracle;

impl Backend for LexicalBiasOracle {
    fn model_id(&self) -> &str {
        "oracle-lexical"
    }

    fn call(&self, request: &ModelRequest) -> Result<ModelResponse, BackendError> {
        if request.template != "blind_answer" {
            return Err(BackendError::Rejected {
                status: 400,
                body: format!("lexical oracle has no answer for {}", request.template),
            });
        }
        let q = content_words(request.arg("question"));
        let best = parse_lettered(request.arg("options"))
            .into_iter()
            .map(|(letter, text)| (letter, content_words(&text).intersection(&q).count()))
            .fold(None, |best: Option<(char, usize)>, (l, s)| match best {
                Some((_, b)) if b >= s => best,
                _ => Some((l, s)),
            });
        Ok(ModelResponse::text(match best {
            Some((letter, _)) => letter.to_string(),
            None => "I cannot tell".to_string(),
        }))
    }
}

/// Replaces every distractor with the correct answer's event under a
/// different verb, so all options share the same words with the question.
pub struct TemplateRewriter;

impl Backend for TemplateRewriter {
    fn model_id(&self) -> &str {
        "template-rewriter"
    }

    fn call(&self, request: &ModelRequest) -> Result<ModelResponse, BackendError> {
        if request.template != "rewrite" {
            return Err(BackendError::Rejected {
                status: 400,
                body: format!("rewriter has no answer for {}", request.template),
            });
        }
        let options = parse_lettered(request.arg("options"));
        let answer_letter = request.arg("answer_letter").trim().chars().next().unwrap_or('A');
        let answer = request.arg("answer_text");
        let parsed = parse_clause(answer);
        let mut verbs = ACTIONS
            .iter()
            .map(|a| a.0)
            .filter(|v| parsed.as_ref().is_none_or(|(_, gv, _)| gv != v));
        let mut k = 0;
        let lines: Vec<String> = options
            .iter()
            .map(|(letter, text)| {
                let new = if *letter == answer_letter {
                    text.clone()
                } else {
                    k += 1;
                    match (&parsed, verbs.next()) {
                        (Some((a, _, o)), Some(v)) => render_event(a, v, o, Tense::Present),
                        _ => format!("{answer} in another way ({k})"),
                    }
                };
                format!("{letter}. {new}")
            })
            .collect();
        Ok(ModelResponse::text(lines.join("\n")))
    }
}

/// Tasks whose correct answer is the only option repeating the question's
/// actor and object, so a blind reader can find it from the text alone.
pub fn bias_suite(seed: u64, n: usize) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tasks = (0..n)
        .map(|i| {
            let actor = *ACTORS.choose(&mut rng).unwrap();
            let object = *OBJECTS.choose(&mut rng).unwrap();
            let verb = ACTIONS.choose(&mut rng).unwrap().0;
            let mut options = Vec::new();
            while options.len() < 4 {
                let a = *ACTORS.iter().filter(|x| **x != actor).collect::<Vec<_>>().choose(&mut rng).unwrap();
                let o = *OBJECTS.iter().filter(|x| **x != object).collect::<Vec<_>>().choose(&mut rng).unwrap();
                let v = ACTIONS.choose(&mut rng).unwrap().0;
                let text = render_event(a, v, o, Tense::Present);
                if !options.contains(&text) {
                    options.push(text);
                }
            }
            let gt = rng.gen_range(0..5);
            options.insert(gt, render_event(actor, verb, object, Tense::Present));
            QaTask::new(
                format!("bias-{seed}-{i}"),
                format!("synth-bias:{i}"),
                format!("What did the {actor} do with the {object}?"),
                options,
                Some(gt),
                QuestionType::Descriptive,
            )
        })
        .collect();
    Dataset {
        name: "synth-bias".into(),
        tasks,
        variant: DatasetVariant::Original,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::providers::{args, ProviderRole};
    use crate::qa::validate_task;

    fn req(template: &str, a: std::collections::BTreeMap<String, String>) -> ModelRequest {
        ModelRequest {
            role: ProviderRole::Prover,
            template: template.into(),
            prompt: String::new(),
            args: a,
            attachments: vec![],
            logprobs: false,
        }
    }

    #[test]
    fn lettered_lines() {
        assert_eq!(
            parse_lettered("A. one\nb) two\n\nnot an option"),
            vec![('A', "one".into()), ('B', "two".into())]
        );
    }

    #[test]
    fn lexical_oracle_picks_overlap() {
        let r = req(
            "blind_answer",
            args([
                ("question", "What did the boy do with the ball?"),
                ("options", "A. the girl opens the door\nB. the boy kicks the ball\nC. the boy holds the cup"),
            ]),
        );
        assert_eq!(LexicalBiasOracle.call(&r).unwrap().text, "B");
    }

    #[test]
    fn suite_is_valid_and_biased() {
        let d = bias_suite(5, 50);
        for t in &d.tasks {
            assert!(validate_task(t).is_empty());
            let gt = t.ground_truth_index.unwrap();
            let q = content_words(&t.question);
            for (i, o) in t.options.iter().enumerate() {
                let overlap = content_words(&o.text).intersection(&q).count();
                assert_eq!(overlap, if i == gt { 2 } else { 0 });
            }
        }
    }

    #[test]
    fn rewriter_keeps_answer() {
        let r = req(
            "rewrite",
            args([
                ("options", "A. the girl opens the door\nB. the boy kicks the ball\nC. the man drops the cup"),
                ("answer_letter", "B"),
                ("answer_text", "the boy kicks the ball"),
            ]),
        );
        let out = TemplateRewriter.call(&r).unwrap().text;
        assert_eq!(out, "A. the boy throws the ball\nB. the boy kicks the ball\nC. the boy holds the ball");
    }
}
