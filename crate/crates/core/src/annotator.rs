//! Token-level parsing categories.
//!
//! A first-match rule cascade over small lexicons and optional coarse POS
//! tags assigns every token one of six categories, or none.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::ops::Range;
use std::path::Path;
use std::str::FromStr;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Category {
    Subject,
    Object,
    Action,
    Location,
    Filler,
    Pronoun,
}

impl Category {
    /// Canonical order; also the tie-break order for rankings.
    pub const ALL: [Category; 6] = [
        Category::Subject,
        Category::Object,
        Category::Action,
        Category::Location,
        Category::Filler,
        Category::Pronoun,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Category::Subject => "Subject",
            Category::Object => "Object",
            Category::Action => "Action",
            Category::Location => "Location",
            Category::Filler => "Filler",
            Category::Pronoun => "Pronoun",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Category {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Category::ALL
            .into_iter()
            .find(|c| c.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::data(format!("unknown category {s:?}")))
    }
}

#[derive(Debug, Clone)]
pub struct Lexicons {
    pub fillers: HashSet<String>,
    pub pronouns: HashSet<String>,
    pub prepositions: HashSet<String>,
    pub verbs: HashSet<String>,
    pub nouns: HashSet<String>,
}

const FILLERS: &str = include_str!("../data/lexicons/fillers.txt");
const PRONOUNS: &str = include_str!("../data/lexicons/pronouns.txt");
const PREPOSITIONS: &str = include_str!("../data/lexicons/prepositions.txt");
const VERBS: &str = include_str!("../data/lexicons/verbs.txt");
const NOUNS: &str = include_str!("../data/lexicons/nouns.txt");

/// One entry per line; `#` starts a comment.
pub fn parse_lexicon(text: &str) -> HashSet<String> {
    text.lines()
        .map(|l| l.split('#').next().unwrap_or("").trim())
        .filter(|l| !l.is_empty())
        .map(str::to_lowercase)
        .collect()
}

impl Default for Lexicons {
    fn default() -> Self {
        Self {
            fillers: parse_lexicon(FILLERS),
            pronouns: parse_lexicon(PRONOUNS),
            prepositions: parse_lexicon(PREPOSITIONS),
            verbs: parse_lexicon(VERBS),
            nouns: parse_lexicon(NOUNS),
        }
    }
}

impl Lexicons {
    /// Load lexicons from `dir`; files that are absent keep the bundled list.
    pub fn load_dir(dir: &Path) -> Result<Self> {
        let mut lex = Self::default();
        let slots: [(&str, &mut HashSet<String>); 5] = [
            ("fillers.txt", &mut lex.fillers),
            ("pronouns.txt", &mut lex.pronouns),
            ("prepositions.txt", &mut lex.prepositions),
            ("verbs.txt", &mut lex.verbs),
            ("nouns.txt", &mut lex.nouns),
        ];
        for (name, slot) in slots {
            let path = dir.join(name);
            if path.exists() {
                let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
                *slot = parse_lexicon(&text);
            }
        }
        Ok(lex)
    }

    fn is_noun_word(&self, tok: &str) -> bool {
        self.nouns.contains(tok) || tok.strip_suffix('s').is_some_and(|stem| self.nouns.contains(stem))
    }

    fn is_verb_word(&self, tok: &str) -> bool {
        self.verbs.contains(tok) || (tok.len() >= 5 && tok.ends_with("ing") && !self.is_noun_word(tok))
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Coarse {
    Filler,
    Pronoun,
    Action,
    Noun,
    Other,
}

/// Categorize one utterance.
pub fn categorize(tokens: &[String], pos_tags: Option<&[String]>, lex: &Lexicons) -> Result<Vec<Option<Category>>> {
    categorize_spans(tokens, pos_tags, &[0..tokens.len()], lex)
}

/// Categorize a transcript made of several utterances. Subject/Object
/// assignment restarts at each span.
pub fn categorize_spans(
    tokens: &[String],
    pos_tags: Option<&[String]>,
    spans: &[Range<usize>],
    lex: &Lexicons,
) -> Result<Vec<Option<Category>>> {
    if let Some(tags) = pos_tags {
        if tags.len() != tokens.len() {
            return Err(Error::Length {
                what: "tokens vs pos tags",
                left: tokens.len(),
                right: tags.len(),
            });
        }
    }
    let lowered: Vec<String> = tokens.iter().map(|t| t.to_lowercase()).collect();
    let coarse: Vec<Coarse> = lowered
        .iter()
        .enumerate()
        .map(|(i, tok)| coarse_class(tok, pos_tags.map(|t| t[i].as_str()), lex))
        .collect();

    let mut out = vec![None; tokens.len()];
    for span in spans {
        let first_action = span.clone().find(|&i| coarse[i] == Coarse::Action);
        for i in span.clone() {
            out[i] = match coarse[i] {
                Coarse::Filler => Some(Category::Filler),
                Coarse::Pronoun => Some(Category::Pronoun),
                Coarse::Action => Some(Category::Action),
                Coarse::Noun => {
                    let lo = i.saturating_sub(2).max(span.start);
                    if lowered[lo..i].iter().any(|t| lex.prepositions.contains(t)) {
                        Some(Category::Location)
                    } else if first_action.is_some_and(|a| i < a) {
                        Some(Category::Subject)
                    } else {
                        Some(Category::Object)
                    }
                }
                Coarse::Other => None,
            };
        }
    }
    Ok(out)
}

fn coarse_class(tok: &str, tag: Option<&str>, lex: &Lexicons) -> Coarse {
    if lex.fillers.contains(tok) || tag == Some("INTJ") {
        return Coarse::Filler;
    }
    if lex.pronouns.contains(tok) || tag == Some("PRON") {
        return Coarse::Pronoun;
    }
    match tag {
        Some("VERB" | "AUX") => Coarse::Action,
        Some("NOUN" | "PROPN") => Coarse::Noun,
        Some(_) => Coarse::Other,
        None if lex.is_verb_word(tok) => Coarse::Action,
        None if lex.is_noun_word(tok) => Coarse::Noun,
        None => Coarse::Other,
    }
}

/// Per-category token counts in canonical order.
pub fn category_frequencies(categories: &[Option<Category>]) -> [usize; 6] {
    let mut counts = [0usize; 6];
    for c in categories.iter().flatten() {
        counts[c.index()] += 1;
    }
    counts
}

/// Mean per-transcript category frequency as CSV rows
/// `dataset,category,mean_frequency` (header included when `header`).
pub fn category_stats_csv(dataset: &str, transcripts: &[Vec<Option<Category>>], header: bool) -> String {
    let mut out = String::new();
    if header {
        out.push_str("dataset,category,mean_frequency\n");
    }
    let n = transcripts.len().max(1) as f64;
    let mut totals = [0usize; 6];
    for cats in transcripts {
        for (t, c) in totals.iter_mut().zip(category_frequencies(cats)) {
            *t += c;
        }
    }
    for cat in Category::ALL {
        out.push_str(&format!("{dataset},{cat},{:.4}\n", totals[cat.index()] as f64 / n));
    }
    out
}
