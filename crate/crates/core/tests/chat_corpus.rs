mod common;

use common::fixtures;
use ekicl_core::chat::{extractor_input_json, load_corpus, load_corpus_with, parse_chat, ParseOptions};
use ekicl_core::embedding::{attach, parse_ingest, read_ingest, synth_embed};
use ekicl_core::{Class, Error};
use std::io::Write;

#[test]
fn golden_files_parse_to_committed_tokens() {
    let dir = fixtures().join("chat");
    let corpus = load_corpus(&dir, Some(&dir.join("manifest.csv"))).unwrap();
    assert!(corpus.warnings.is_empty());
    let ids: Vec<&str> = corpus.transcripts.iter().map(|t| t.id.as_str()).collect();
    assert_eq!(ids, ["p001", "p002", "p003", "p004"]);
    for t in &corpus.transcripts {
        let want = std::fs::read_to_string(dir.join(format!("expected/{}.tokens", t.id))).unwrap();
        assert_eq!(t.tokens.join(" "), want.trim_end(), "{}", t.id);
    }
    let labels: Vec<Option<Class>> = corpus.transcripts.iter().map(|t| t.gold_label).collect();
    assert_eq!(labels, [Some(Class::Hc), Some(Class::Ad), Some(Class::Ad), Some(Class::Hc)]);
}

#[test]
fn continuation_line_joins_its_utterance() {
    let dir = fixtures().join("chat");
    let text = std::fs::read_to_string(dir.join("p003.cha")).unwrap();
    let t = parse_chat("p003", &text).unwrap();
    assert_eq!(t.utterance_lengths(), vec![12, 6, 3]);
}

#[test]
fn interviewer_tiers_on_request() {
    let dir = fixtures().join("chat");
    let text = std::fs::read_to_string(dir.join("p001.cha")).unwrap();
    let t = ekicl_core::chat::parse_chat_with("p001", &text, &ParseOptions::with_interviewer()).unwrap();
    assert_eq!(t.utterances[0].speaker, "INV");
    assert_eq!(t.tokens[..6], ["just", "tell", "me", "what", "you", "see"]);
}

#[test]
fn parse_errors_name_the_line() {
    let err = parse_chat("x", "@Begin\n*PAR the boy\n").unwrap_err();
    assert!(matches!(err, Error::Parse { line: 2, .. }), "{err:?}");
    let err = parse_chat("x", "@Begin\n*INV:\thello .\n@End\n").unwrap_err();
    assert!(matches!(err, Error::NoParticipantUtterances));
}

#[test]
fn manifest_orphans_become_warnings() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::copy(fixtures().join("chat/p001.cha"), tmp.path().join("p001.cha")).unwrap();
    let manifest = tmp.path().join("m.csv");
    std::fs::write(&manifest, "p001,AD\nghost,HC\n").unwrap();
    let corpus = load_corpus(tmp.path(), Some(&manifest)).unwrap();
    assert_eq!(corpus.transcripts.len(), 1);
    assert_eq!(corpus.transcripts[0].gold_label, Some(Class::Ad));
    assert_eq!(corpus.warnings.len(), 1);
    assert!(corpus.warnings[0].contains("ghost"));
}

#[test]
fn bad_file_is_named_in_error() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(tmp.path().join("broken.cha"), "@Begin\nnonsense\n").unwrap();
    let err = load_corpus_with(tmp.path(), None, &ParseOptions::default()).unwrap_err();
    assert!(err.to_string().contains("broken.cha"), "{err}");
}

/// The extractor reads `extractor_input_json` and writes one record per
/// transcript; its output must load and join back onto the corpus.
#[test]
fn extractor_round_trip_through_ingest() {
    let dir = fixtures().join("chat");
    let corpus = load_corpus(&dir, Some(&dir.join("manifest.csv"))).unwrap().transcripts;
    let input: serde_json::Value = serde_json::from_str(&extractor_input_json(&corpus)).unwrap();
    let rows = input.as_array().unwrap();
    assert_eq!(rows.len(), 4);
    assert_eq!(rows[1]["transcript_id"], "p002");
    assert_eq!(rows[1]["label"], "AD");

    // what a sidecar extractor would emit: labels and tags may be null
    let tmp = tempfile::NamedTempFile::new().unwrap();
    {
        let mut f = tmp.reopen().unwrap();
        for row in rows {
            let tokens: Vec<String> = serde_json::from_value(row["tokens"].clone()).unwrap();
            let vectors: Vec<Vec<f64>> = tokens.iter().map(|t| synth_embed(t, 8, 1)).collect();
            let rec = serde_json::json!({
                "transcript_id": row["transcript_id"],
                "label": null,
                "tokens": tokens,
                "pos_tags": null,
                "vectors": vectors,
            });
            writeln!(f, "{rec}").unwrap();
        }
    }
    let records = read_ingest(tmp.path()).unwrap();
    for (r, t) in records.iter().zip(&corpus) {
        assert_eq!(r.tokens.len(), t.tokens.len());
        assert_eq!(r.dim(), 8);
    }
    let joined = attach(&corpus, records).unwrap();
    assert_eq!(joined[1].gold_label, Some(Class::Ad));
    assert_eq!(joined[2].utterance_spans().len(), 3);
}

#[test]
fn misaligned_extractor_output_is_rejected() {
    let dir = fixtures().join("chat");
    let corpus = load_corpus(&dir, None).unwrap().transcripts;
    let line = r#"{"transcript_id":"p001","label":null,"tokens":["the","girl"],"pos_tags":null,"vectors":[[0.1],[0.2]]}"#;
    let records = parse_ingest(line.as_bytes()).unwrap();
    let err = attach(&corpus[..1], records).unwrap_err();
    assert!(err.to_string().contains("p001: token mismatch at 1"), "{err}");
}
