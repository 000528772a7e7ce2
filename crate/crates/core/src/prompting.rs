//! Prompt rendering for the in-context learners and completion parsing.
//!
//! Template `ekicl-v1` (lines joined with `\n`, no trailing newline):
//!
//! ```text
//! You will read a picture description. Rate it with exactly one word: {ad_word} or {hc_word}.
//!
//! [Structural typicality score: {demo_feat}]      per demo, with feature hints
//! Description: {demo_text}
//! Answer: {demo_label}
//!
//! [Reference screening probability of impairment: {conf}]
//! [Structural typicality score: {query_feat}]
//! Description: {query_text}
//! Answer:
//! ```
//!
//! Confidence is printed with two decimals, feature scores with four.

use crate::error::{Error, Result};
use crate::Class;
use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

pub const TEMPLATE_ID: &str = "ekicl-v1";

const BUNDLED_PAIRS: &str = include_str!("../data/label_pairs.csv");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ConfigClass {
    Aligned,
    FixedGood,
    FixedBad,
    Custom,
}

impl ConfigClass {
    pub fn as_str(self) -> &'static str {
        match self {
            ConfigClass::Aligned => "Aligned",
            ConfigClass::FixedGood => "FixedGood",
            ConfigClass::FixedBad => "FixedBad",
            ConfigClass::Custom => "Custom",
        }
    }
}

impl fmt::Display for ConfigClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ConfigClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm: String = s.chars().filter(|c| c.is_ascii_alphanumeric()).collect::<String>().to_ascii_lowercase();
        match norm.as_str() {
            "aligned" => Ok(ConfigClass::Aligned),
            "fixedgood" => Ok(ConfigClass::FixedGood),
            "fixedbad" => Ok(ConfigClass::FixedBad),
            "custom" => Ok(ConfigClass::Custom),
            _ => Err(Error::data(format!("unknown label configuration {s:?}"))),
        }
    }
}

/// The two words learners answer with.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelPair {
    pub ad_word: String,
    pub hc_word: String,
    pub config_class: ConfigClass,
}

impl LabelPair {
    pub fn new(ad_word: &str, hc_word: &str, config_class: ConfigClass) -> Result<Self> {
        let (ad, hc) = (ad_word.trim(), hc_word.trim());
        if ad.is_empty() || hc.is_empty() {
            return Err(Error::data("label words must be non-empty"));
        }
        if ad.to_lowercase() == hc.to_lowercase() {
            return Err(Error::data(format!("label words must differ: {ad:?} / {hc:?}")));
        }
        Ok(Self {
            ad_word: ad.to_string(),
            hc_word: hc.to_string(),
            config_class,
        })
    }

    pub fn word_for(&self, class: Class) -> &str {
        match class {
            Class::Ad => &self.ad_word,
            Class::Hc => &self.hc_word,
        }
    }

    /// `ad/hc` tag used in report rows.
    pub fn tag(&self) -> String {
        format!("{}/{}", self.ad_word, self.hc_word)
    }
}

impl Default for LabelPair {
    fn default() -> Self {
        Self {
            ad_word: "Bad".into(),
            hc_word: "Good".into(),
            config_class: ConfigClass::Aligned,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Demo {
    pub text: String,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatHint {
    pub query: f64,
    pub demos: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptSpec {
    pub demos: Vec<Demo>,
    pub query_text: String,
    pub label_pair: LabelPair,
    pub conf_hint: Option<f64>,
    pub feat_hint: Option<FeatHint>,
    pub template_id: String,
}

impl PromptSpec {
    pub fn new(query_text: impl Into<String>, label_pair: LabelPair) -> Self {
        Self {
            demos: Vec::new(),
            query_text: query_text.into(),
            label_pair,
            conf_hint: None,
            feat_hint: None,
            template_id: TEMPLATE_ID.to_string(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.template_id != TEMPLATE_ID {
            return Err(Error::Config(format!("unknown template {}", self.template_id)));
        }
        let pair = &self.label_pair;
        if let Some(d) = self.demos.iter().find(|d| d.label != pair.ad_word && d.label != pair.hc_word) {
            return Err(Error::data(format!("demo label {:?} is not one of the pair's words", d.label)));
        }
        if let Some(c) = self.conf_hint {
            if !(c > 0.0 && c < 1.0) {
                return Err(Error::data(format!("confidence hint {c} outside (0, 1)")));
            }
        }
        if let Some(f) = &self.feat_hint {
            if f.demos.len() != self.demos.len() {
                return Err(Error::Length {
                    what: "demo feature hints vs demos",
                    left: f.demos.len(),
                    right: self.demos.len(),
                });
            }
        }
        Ok(())
    }
}

pub fn build_prompt(spec: &PromptSpec) -> String {
    let pair = &spec.label_pair;
    let mut lines = vec![
        format!(
            "You will read a picture description. Rate it with exactly one word: {} or {}.",
            pair.ad_word, pair.hc_word
        ),
        String::new(),
    ];
    for (i, demo) in spec.demos.iter().enumerate() {
        if let Some(f) = spec.feat_hint.as_ref().and_then(|f| f.demos.get(i)) {
            lines.push(format!("Structural typicality score: {f:.4}"));
        }
        lines.push(format!("Description: {}", demo.text));
        lines.push(format!("Answer: {}", demo.label));
        lines.push(String::new());
    }
    if let Some(c) = spec.conf_hint {
        lines.push(format!("Reference screening probability of impairment: {c:.2}"));
    }
    if let Some(f) = &spec.feat_hint {
        lines.push(format!("Structural typicality score: {:.4}", f.query));
    }
    lines.push(format!("Description: {}", spec.query_text));
    lines.push("Answer:".to_string());
    lines.join("\n")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Vote {
    #[serde(rename = "AD")]
    Ad,
    #[serde(rename = "HC")]
    Hc,
    Abstain,
}

impl From<Class> for Vote {
    fn from(c: Class) -> Self {
        match c {
            Class::Ad => Vote::Ad,
            Class::Hc => Vote::Hc,
        }
    }
}

/// Byte offset of the first case-insensitive whole-word occurrence.
fn find_word(haystack_lower: &str, word: &str) -> Option<usize> {
    let needle = word.to_lowercase();
    if needle.is_empty() {
        return None;
    }
    haystack_lower.match_indices(&needle).map(|(i, _)| i).find(|&i| {
        let before = haystack_lower[..i].chars().next_back();
        let after = haystack_lower[i + needle.len()..].chars().next();
        !before.is_some_and(char::is_alphanumeric) && !after.is_some_and(char::is_alphanumeric)
    })
}

/// Map a completion to a vote: the label word occurring first wins; neither
/// word means abstention.
pub fn parse_completion(text: &str, pair: &LabelPair) -> Vote {
    let lower = text.to_lowercase();
    let ad = find_word(&lower, &pair.ad_word);
    let hc = find_word(&lower, &pair.hc_word);
    match (ad, hc) {
        (None, None) => Vote::Abstain,
        (Some(_), None) => Vote::Ad,
        (None, Some(_)) => Vote::Hc,
        (Some(a), Some(h)) if a < h => Vote::Ad,
        (Some(a), Some(h)) if h < a => Vote::Hc,
        // same start: the longer word is the real match
        _ if pair.ad_word.len() >= pair.hc_word.len() => Vote::Ad,
        _ => Vote::Hc,
    }
}

/// Parse label-sweep CSV text (`config_class,ad_word,hc_word`, header optional).
/// Pairs come back grouped by configuration class, file order within a class.
pub fn parse_label_pairs(text: &str) -> Result<Vec<LabelPair>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let mut pairs = Vec::new();
    let mut seen = HashSet::new();
    for (idx, rec) in rdr.records().enumerate() {
        let rec = rec?;
        if rec.len() != 3 {
            return Err(Error::data(format!("label pair row {} must have three columns", idx + 1)));
        }
        if idx == 0 && rec[0].eq_ignore_ascii_case("config_class") {
            continue;
        }
        let pair = LabelPair::new(&rec[1], &rec[2], rec[0].parse()?)?;
        if !seen.insert((pair.ad_word.to_lowercase(), pair.hc_word.to_lowercase())) {
            return Err(Error::data(format!("duplicate label pair {}", pair.tag())));
        }
        pairs.push(pair);
    }
    pairs.sort_by_key(|p| p.config_class);
    Ok(pairs)
}

pub fn label_sweep_pairs(path: &Path) -> Result<Vec<LabelPair>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_label_pairs(&text)
}

/// The 30 bundled sweep pairs (10 per configuration class).
pub fn bundled_label_pairs() -> Vec<LabelPair> {
    parse_label_pairs(BUNDLED_PAIRS).expect("bundled label pairs are valid")
}
