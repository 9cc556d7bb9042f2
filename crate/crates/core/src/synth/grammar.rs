//! The fixed grammar synthetic captions, questions and statements are written
//! in: `the <actor> <verb> the <object>`, joined by connectives.

pub const ACTORS: [&str; 8] = ["boy", "girl", "man", "woman", "dog", "baby", "teacher", "chef"];

/// (base, third person, past)
pub const ACTIONS: [(&str, &str, &str); 10] = [
    ("kick", "kicks", "kicked"),
    ("throw", "throws", "threw"),
    ("hold", "holds", "held"),
    ("open", "opens", "opened"),
    ("push", "pushes", "pushed"),
    ("drop", "drops", "dropped"),
    ("carry", "carries", "carried"),
    ("lift", "lifts", "lifted"),
    ("catch", "catches", "caught"),
    ("pull", "pulls", "pulled"),
];

pub const OBJECTS: [&str; 8] = ["ball", "balloon", "cup", "box", "door", "chair", "book", "hoop"];

/// Words joining two clauses in questions and statements.
pub(crate) const RELATIONS: [&str; 4] = [" because ", " after ", " before ", " when "];

const DETERMINERS: [&str; 3] = ["the", "a", "an"];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Tense {
    Base,
    Present,
    Past,
}

pub fn render_event(actor: &str, action: &str, object: &str, tense: Tense) -> String {
    let verb = ACTIONS
        .iter()
        .find(|a| a.0 == action)
        .map(|&(base, third, past)| match tense {
            Tense::Base => base,
            Tense::Present => third,
            Tense::Past => past,
        })
        .unwrap_or(action);
    format!("the {actor} {verb} the {object}")
}

/// Base form of a known verb in any tense; other words unchanged.
pub fn lemma(word: &str) -> &str {
    ACTIONS
        .iter()
        .find(|&&(b, t, p)| word == b || word == t || word == p)
        .map(|a| a.0)
        .unwrap_or(word)
}

fn content_tokens(clause: &str) -> Vec<String> {
    clause
        .split_whitespace()
        .map(|w| {
            w.trim_matches(|c: char| !c.is_alphanumeric())
                .to_lowercase()
        })
        .filter(|w| !w.is_empty() && !DETERMINERS.contains(&w.as_str()))
        .collect()
}

/// Generic `(subject, predicate, object)` reading of one clause: first word,
/// lemmatized second word, rest. Determiners are dropped.
pub fn triplet_of(clause: &str) -> Option<(String, String, String)> {
    let toks = content_tokens(clause);
    match toks.as_slice() {
        [s, p, rest @ ..] => Some((s.clone(), lemma(p).to_string(), rest.join(" "))),
        _ => None,
    }
}

/// `(actor, base verb, object)` when the clause is a well-formed event
/// description over the vocabulary.
pub fn parse_clause(clause: &str) -> Option<(String, String, String)> {
    let (s, p, o) = triplet_of(clause)?;
    let known = ACTORS.contains(&s.as_str())
        && ACTIONS.iter().any(|a| a.0 == p)
        && OBJECTS.contains(&o.as_str());
    known.then_some((s, p, o))
}

/// Splits on connectives (`because`, `after`, `before`, `when`, `and`) and on
/// `,` / `;`.
pub fn split_clauses(text: &str) -> Vec<String> {
    let mut parts = vec![format!(" {} ", text.to_lowercase())];
    for sep in RELATIONS.iter().copied().chain([" and ", ",", ";"]) {
        parts = parts
            .iter()
            .flat_map(|p| p.split(sep).map(|s| format!(" {} ", s.trim())))
            .collect();
    }
    parts
        .into_iter()
        .map(|p| p.trim().trim_end_matches(['.', '?', '!']).trim().to_string())
        .filter(|p| !p.is_empty())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rendering_and_parsing_agree() {
        for (b, _, _) in ACTIONS {
            for t in [Tense::Base, Tense::Present, Tense::Past] {
                let s = render_event("girl", b, "cup", t);
                assert_eq!(
                    parse_clause(&s),
                    Some(("girl".into(), b.to_string(), "cup".into()))
                );
            }
        }
    }

    #[test]
    fn clauses_split() {
        assert_eq!(
            split_clauses("The boy holds the balloon and the girl opens the door."),
            vec!["the boy holds the balloon", "the girl opens the door"]
        );
        assert_eq!(
            split_clauses("the dog pulls the box after the man kicked the ball"),
            vec!["the dog pulls the box", "the man kicked the ball"]
        );
        assert_eq!(triplet_of("the room is quiet"), Some(("room".into(), "is".into(), "quiet".into())));
        assert_eq!(parse_clause("the room is quiet"), None);
    }
}
