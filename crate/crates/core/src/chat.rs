//! Reader for the subset of the CHAT transcript format used by
//! picture-description corpora.
//!
//! Only main tiers (`*SPK:`) of the selected speakers survive. Headers
//! (`@...`) and dependent tiers (`%...`) are skipped. Within an utterance the
//! following markup is understood:
//!
//! | markup            | effect                                              |
//! |-------------------|-----------------------------------------------------|
//! | `&-um`            | filler, kept as `um`                                |
//! | `&=laughs`, `&+f` | dropped                                             |
//! | `<a b> [/]`       | retrace: marker and preceding word or group dropped |
//! | `word [: fix]`    | preceding word or group replaced by `fix`           |
//! | `goin(g)`         | expansion kept: `going`                             |
//! | `xxx`, `yyy`      | dropped                                             |
//! | `(.)`, `(..)`     | pauses dropped                                      |
//! | `. ? !`, `+...`   | terminators dropped                                 |
//! | `[* s:r]` etc.    | any other bracket code dropped                      |
//!
//! Surviving tokens are lowercased.

use crate::error::{Error, Result};
use crate::Class;
use log::warn;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Utterance {
    pub speaker: String,
    pub raw: String,
    pub tokens: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transcript {
    pub id: String,
    pub utterances: Vec<Utterance>,
    pub tokens: Vec<String>,
    pub gold_label: Option<Class>,
}

impl Transcript {
    /// Space-joined token text, the form shown to learners.
    pub fn text(&self) -> String {
        self.tokens.join(" ")
    }

    pub fn utterance_lengths(&self) -> Vec<usize> {
        self.utterances.iter().map(|u| u.tokens.len()).collect()
    }
}

/// Which speaker tiers are retained.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParseOptions {
    pub speakers: Vec<String>,
}

impl Default for ParseOptions {
    fn default() -> Self {
        Self {
            speakers: vec!["PAR".to_string()],
        }
    }
}

impl ParseOptions {
    pub fn with_interviewer() -> Self {
        Self {
            speakers: vec!["PAR".to_string(), "INV".to_string()],
        }
    }
}

/// Parse a `.cha` document keeping participant (`PAR`) utterances only.
pub fn parse_chat(id: &str, text: &str) -> Result<Transcript> {
    parse_chat_with(id, text, &ParseOptions::default())
}

pub fn parse_chat_with(id: &str, text: &str, opts: &ParseOptions) -> Result<Transcript> {
    // (line number, speaker, content) of each main tier, continuation lines folded in
    let mut tiers: Vec<(usize, String, String)> = Vec::new();
    let mut in_main_tier = false;

    for (idx, raw_line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw_line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        if line.starts_with('\t') || line.starts_with(' ') {
            if in_main_tier {
                if let Some(last) = tiers.last_mut() {
                    last.2.push(' ');
                    last.2.push_str(line.trim());
                }
            }
            continue;
        }
        match line.chars().next() {
            Some('@') | Some('%') => in_main_tier = false,
            Some('*') => {
                let Some(colon) = line.find(':') else {
                    return Err(Error::Parse {
                        line: line_no,
                        message: "malformed speaker line (no colon)".into(),
                    });
                };
                let speaker = &line[1..colon];
                if !is_speaker_code(speaker) {
                    return Err(Error::Parse {
                        line: line_no,
                        message: format!("invalid speaker code {speaker:?}"),
                    });
                }
                tiers.push((line_no, speaker.to_string(), line[colon + 1..].trim().to_string()));
                in_main_tier = true;
            }
            _ => {
                return Err(Error::Parse {
                    line: line_no,
                    message: "unrecognized line type".into(),
                })
            }
        }
    }

    let utterances: Vec<Utterance> = tiers
        .into_iter()
        .filter(|(_, spk, _)| opts.speakers.iter().any(|s| s == spk))
        .map(|(_, speaker, content)| Utterance {
            tokens: clean_content(&content),
            speaker,
            raw: content,
        })
        .filter(|u| !u.tokens.is_empty())
        .collect();

    if utterances.is_empty() {
        return Err(Error::NoParticipantUtterances);
    }
    let tokens = utterances.iter().flat_map(|u| u.tokens.iter().cloned()).collect();
    Ok(Transcript {
        id: id.to_string(),
        utterances,
        tokens,
        gold_label: None,
    })
}

fn is_speaker_code(s: &str) -> bool {
    s.len() == 3 && s.bytes().all(|b| b.is_ascii_uppercase())
}

/// Strip CHAT markup from the content of one main tier.
pub fn clean_content(content: &str) -> Vec<String> {
    // Each entry is one retraceable unit: a single word or an angle group.
    let mut units: Vec<Vec<String>> = Vec::new();
    let chars: Vec<char> = content.chars().collect();
    let mut i = 0;

    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
        } else if c == '<' {
            let end = matching_close(&chars, i, '<', '>');
            let inner: String = chars[i + 1..end].iter().collect();
            units.push(clean_content(&inner));
            i = end + 1;
        } else if c == '[' {
            let end = chars[i..].iter().position(|&ch| ch == ']').map_or(chars.len(), |p| i + p);
            let code: String = chars[i + 1..end].iter().collect();
            apply_bracket_code(code.trim(), &mut units);
            i = end + 1;
        } else if c == '\u{15}' {
            // media bullet: \x15start_end\x15
            let end = chars[i + 1..]
                .iter()
                .position(|&ch| ch == '\u{15}')
                .map_or(chars.len(), |p| i + 1 + p);
            i = end + 1;
        } else {
            let start = i;
            while i < chars.len() && !chars[i].is_whitespace() && chars[i] != '<' && chars[i] != '[' {
                i += 1;
            }
            let word: String = chars[start..i].iter().collect();
            if let Some(tok) = clean_word(&word) {
                units.push(vec![tok]);
            }
        }
    }

    units.into_iter().flatten().filter(|t| !t.is_empty()).collect()
}

fn matching_close(chars: &[char], open_at: usize, open: char, close: char) -> usize {
    let mut depth = 0usize;
    for (j, &ch) in chars.iter().enumerate().skip(open_at) {
        if ch == open {
            depth += 1;
        } else if ch == close {
            depth -= 1;
            if depth == 0 {
                return j;
            }
        }
    }
    chars.len()
}

fn apply_bracket_code(code: &str, units: &mut Vec<Vec<String>>) {
    if !code.is_empty() && code.chars().all(|c| c == '/') {
        units.pop();
    } else if let Some(fix) = code.strip_prefix(':') {
        if fix.starts_with(':') {
            return;
        }
        let replacement: Vec<String> = fix.split_whitespace().filter_map(clean_word).collect();
        units.pop();
        units.push(replacement);
    }
}

fn clean_word(word: &str) -> Option<String> {
    if let Some(filler) = word.strip_prefix("&-") {
        return normalize(filler);
    }
    if word.starts_with('&') || word.starts_with('+') || word.starts_with('0') {
        return None;
    }
    if is_pause(word) {
        return None;
    }
    let tok = normalize(word)?;
    match tok.as_str() {
        "xxx" | "yyy" | "www" => None,
        _ => Some(tok),
    }
}

fn is_pause(word: &str) -> bool {
    word.len() >= 3
        && word.starts_with('(')
        && word.ends_with(')')
        && word[1..word.len() - 1].chars().all(|c| c == '.' || c == ':' || c.is_ascii_digit())
}

fn normalize(word: &str) -> Option<String> {
    let base = word.split('@').next().unwrap_or("");
    let kept: String = base
        .chars()
        .filter(|c| c.is_alphanumeric() || *c == '\'' || *c == '-')
        .collect();
    let trimmed = kept.trim_matches(|c| c == '-' || c == '\'');
    if trimmed.is_empty() {
        None
    } else {
        Some(trimmed.to_lowercase())
    }
}

/// A loaded corpus plus non-fatal issues found while joining the manifest.
#[derive(Debug, Clone, Default)]
pub struct Corpus {
    pub transcripts: Vec<Transcript>,
    pub warnings: Vec<String>,
}

/// Read a two-column `id,label` manifest. A leading `id,label` header is optional.
pub fn read_manifest(path: &Path) -> Result<BTreeMap<String, Class>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            other => Error::data(format!("{}: {other:?}", path.display())),
        })?;
    let mut out = BTreeMap::new();
    for (idx, rec) in rdr.records().enumerate() {
        let rec = rec?;
        if rec.len() != 2 {
            return Err(Error::data(format!(
                "{}: row {} must have two columns",
                path.display(),
                idx + 1
            )));
        }
        if idx == 0 && rec[0].eq_ignore_ascii_case("id") && rec[1].eq_ignore_ascii_case("label") {
            continue;
        }
        let label: Class = rec[1].parse()?;
        if out.insert(rec[0].to_string(), label).is_some() {
            return Err(Error::data(format!("duplicate manifest id {}", &rec[0])));
        }
    }
    Ok(out)
}

/// Parse every `.cha` file in `dir`, labelling from the manifest when given.
pub fn load_corpus(dir: &Path, manifest: Option<&Path>) -> Result<Corpus> {
    load_corpus_with(dir, manifest, &ParseOptions::default())
}

pub fn load_corpus_with(dir: &Path, manifest: Option<&Path>, opts: &ParseOptions) -> Result<Corpus> {
    let labels = match manifest {
        Some(p) => read_manifest(p)?,
        None => BTreeMap::new(),
    };

    let mut by_id: BTreeMap<String, Transcript> = BTreeMap::new();
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let is_cha = path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| e.eq_ignore_ascii_case("cha"));
        if !is_cha || !path.is_file() {
            continue;
        }
        let id = path
            .file_stem()
            .and_then(|s| s.to_str())
            .ok_or_else(|| Error::data(format!("{}: non-UTF-8 file name", path.display())))?
            .to_string();
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let mut transcript = parse_chat_with(&id, &text, opts)
            .map_err(|e| Error::data(format!("{}: {e}", path.display())))?;
        transcript.gold_label = labels.get(&id).copied();
        if by_id.insert(id.clone(), transcript).is_some() {
            return Err(Error::data(format!("duplicate transcript id {id}")));
        }
    }

    let mut warnings = Vec::new();
    for id in labels.keys().filter(|id| !by_id.contains_key(*id)) {
        let msg = format!("manifest entry {id} has no matching .cha file");
        warn!("{msg}");
        warnings.push(msg);
    }

    Ok(Corpus {
        transcripts: by_id.into_values().collect(),
        warnings,
    })
}

#[derive(Serialize)]
struct ExtractorInput<'a> {
    transcript_id: &'a str,
    label: Option<Class>,
    tokens: &'a [String],
}

/// Corpus JSON handed to the embedding extractor:
/// `[{"transcript_id", "label", "tokens"}]`.
pub fn extractor_input_json(transcripts: &[Transcript]) -> String {
    let rows: Vec<ExtractorInput> = transcripts
        .iter()
        .map(|t| ExtractorInput {
            transcript_id: &t.id,
            label: t.gold_label,
            tokens: &t.tokens,
        })
        .collect();
    serde_json::to_string_pretty(&rows).expect("corpus serializes")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn filler_is_normalized_and_punctuation_dropped() {
        let t = parse_chat("x", "@Begin\n*PAR:\tthe boy is &-um taking cookies .").unwrap();
        assert_eq!(t.tokens, ["the", "boy", "is", "um", "taking", "cookies"]);
    }

    #[test]
    fn interviewer_only_is_an_error() {
        let err = parse_chat("x", "*INV:\thow are you ?").unwrap_err();
        assert_eq!(err.to_string(), "no participant utterances");
    }

    #[test]
    fn headers_only_is_an_error() {
        assert!(matches!(
            parse_chat("x", "@Begin\n@End"),
            Err(Error::NoParticipantUtterances)
        ));
    }

    #[test]
    fn missing_colon_reports_line() {
        let err = parse_chat("x", "@Begin\n*PAR the boy").unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn interviewer_flag_keeps_inv() {
        let t = parse_chat_with("x", "*INV:\twhat happens ?\n*PAR:\tnothing .", &ParseOptions::with_interviewer())
            .unwrap();
        assert_eq!(t.tokens, ["what", "happens", "nothing"]);
    }

    #[test]
    fn markup_subset() {
        assert_eq!(clean_content("<the boy> [//] the kid is goin(g) up ."), ["the", "kid", "is", "going", "up"]);
        assert_eq!(clean_content("he [/] he takes &=laughs cookie [: cookies] ."), ["he", "takes", "cookies"]);
        assert_eq!(clean_content("xxx the (.) stool (..) is yyy (...) falling !"), ["the", "stool", "is", "falling"]);
        assert_eq!(clean_content("water's [* s:r] running +..."), ["water's", "running"]);
        assert_eq!(clean_content("&-uh the &+f faucet \u{15}1200_3400\u{15}"), ["uh", "the", "faucet"]);
        assert_eq!(clean_content("Mother@l is (1.5) 0is drying ?"), ["mother", "is", "drying"]);
    }

    #[test]
    fn continuation_lines_fold_into_main_tier() {
        let t = parse_chat("x", "*PAR:\tthe boy\n\tis falling .\n%mor:\tdet|the n|boy").unwrap();
        assert_eq!(t.tokens, ["the", "boy", "is", "falling"]);
        assert_eq!(t.utterances.len(), 1);
    }

    #[test]
    fn corpus_join_with_manifest() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("b.cha"), "*PAR:\tthe girl .").unwrap();
        fs::write(dir.path().join("a.cha"), "*PAR:\tthe boy .").unwrap();
        fs::write(dir.path().join("c.cha"), "*PAR:\tthe mother .").unwrap();
        let manifest = dir.path().join("labels.csv");
        fs::write(&manifest, "id,label\na,AD\nb,HC\nz,AD\n").unwrap();

        let corpus = load_corpus(dir.path(), Some(&manifest)).unwrap();
        let ids: Vec<_> = corpus.transcripts.iter().map(|t| t.id.as_str()).collect();
        assert_eq!(ids, ["a", "b", "c"]);
        assert_eq!(corpus.transcripts[0].gold_label, Some(Class::Ad));
        assert_eq!(corpus.transcripts[1].gold_label, Some(Class::Hc));
        assert_eq!(corpus.transcripts[2].gold_label, None);
        assert_eq!(corpus.warnings.len(), 1);
        assert!(corpus.warnings[0].contains('z'));
    }

    #[test]
    fn unreadable_file_is_named() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("bad.cha"), [0xff, 0xfe, 0x00]).unwrap();
        let err = load_corpus(dir.path(), None).unwrap_err();
        assert!(err.to_string().contains("bad.cha"), "{err}");
    }

    #[test]
    fn duplicate_manifest_id_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = dir.path().join("labels.csv");
        fs::write(&manifest, "a,AD\na,HC\n").unwrap();
        assert!(read_manifest(&manifest).is_err());
    }

    const VOCAB: &[&str] = &["the", "boy", "cookie", "jar", "stool", "mother", "is", "falling", "water"];
    const MARKERS: &[&str] = &["&-um", "&-uh", "&=laughs", "(.)", "(..)", "(...)", "xxx", "yyy", ".", "?", "[/]", "[//]", "[* s]"];

    fn is_subsequence(needle: &[String], hay: &[String]) -> bool {
        let mut it = hay.iter();
        needle.iter().all(|n| it.any(|h| h == n))
    }

    proptest! {
        #[test]
        fn surviving_tokens_keep_their_order(picks in proptest::collection::vec((any::<bool>(), 0usize..13), 0..40)) {
            let parts: Vec<&str> = picks
                .iter()
                .map(|&(word, i)| if word { VOCAB[i % VOCAB.len()] } else { MARKERS[i % MARKERS.len()] })
                .collect();
            let content = parts.join(" ");
            let out = clean_content(&content);
            let reference: Vec<String> = content
                .split_whitespace()
                .filter_map(|w| w.strip_prefix("&-").or(Some(w)))
                .filter(|w| w.chars().all(|c| c.is_alphabetic()))
                .filter(|w| *w != "xxx" && *w != "yyy")
                .map(str::to_string)
                .collect();
            prop_assert!(is_subsequence(&out, &reference), "{out:?} vs {reference:?}");
            prop_assert_eq!(clean_content(&content), out);
        }
    }
}
