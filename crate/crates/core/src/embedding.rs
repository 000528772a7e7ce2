//! Per-token embedding vectors: JSON Lines ingest, a deterministic synthetic
//! generator for fixtures, and the join against a parsed corpus.

use crate::chat::Transcript;
use crate::error::{Error, Result};
use crate::Class;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddedTranscript {
    pub transcript_id: String,
    pub gold_label: Option<Class>,
    pub tokens: Vec<String>,
    /// One row per token.
    pub vectors: Vec<Vec<f64>>,
    pub pos_tags: Option<Vec<String>>,
    /// Token count of each utterance, when known. Written to ingest files as
    /// the optional `utterance_lengths` field.
    pub utterance_lengths: Option<Vec<usize>>,
}

/// Wire form of one ingest line.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct IngestRecord {
    transcript_id: String,
    label: Option<Class>,
    tokens: Vec<String>,
    pos_tags: Option<Vec<String>>,
    vectors: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    utterance_lengths: Option<Vec<usize>>,
}

impl EmbeddedTranscript {
    pub fn dim(&self) -> usize {
        self.vectors.first().map_or(0, Vec::len)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn text(&self) -> String {
        self.tokens.join(" ")
    }

    /// Mean of the token vectors (the semantic-retrieval representation).
    pub fn mean_vector(&self) -> Vec<f64> {
        let mut mean = vec![0.0; self.dim()];
        for row in &self.vectors {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        let n = self.vectors.len().max(1) as f64;
        mean.iter_mut().for_each(|m| *m /= n);
        mean
    }

    /// Token ranges of each utterance; the whole transcript when unknown.
    pub fn utterance_spans(&self) -> Vec<std::ops::Range<usize>> {
        match &self.utterance_lengths {
            Some(lengths) if lengths.iter().sum::<usize>() == self.tokens.len() => {
                let mut start = 0;
                lengths
                    .iter()
                    .map(|&len| {
                        let r = start..start + len;
                        start += len;
                        r
                    })
                    .collect()
            }
            _ => vec![0..self.tokens.len()],
        }
    }

    /// Check the per-record invariants.
    pub fn validate(&self) -> Result<()> {
        let id = &self.transcript_id;
        if self.vectors.len() != self.tokens.len() {
            return Err(Error::data(format!(
                "{id}: {} tokens but {} vector rows",
                self.tokens.len(),
                self.vectors.len()
            )));
        }
        if let Some(tags) = &self.pos_tags {
            if tags.len() != self.tokens.len() {
                return Err(Error::data(format!(
                    "{id}: {} tokens but {} pos tags",
                    self.tokens.len(),
                    tags.len()
                )));
            }
        }
        let dim = self.dim();
        for (i, row) in self.vectors.iter().enumerate() {
            if row.len() != dim {
                return Err(Error::data(format!("{id}: ragged vector rows (row {i} has {} of {dim})", row.len())));
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::data(format!("{id}: non-finite value in row {i}")));
            }
        }
        if !self.tokens.is_empty() && dim == 0 {
            return Err(Error::data(format!("{id}: zero-dimensional vectors")));
        }
        Ok(())
    }
}

fn check_corpus_dimension(records: &[EmbeddedTranscript]) -> Result<()> {
    let mut dims = records.iter().filter(|r| !r.is_empty()).map(|r| (r.dim(), &r.transcript_id));
    if let Some((first, _)) = dims.next() {
        if let Some((d, id)) = dims.find(|(d, _)| *d != first) {
            return Err(Error::data(format!("inconsistent dimension: {id} has {d}, expected {first}")));
        }
    }
    Ok(())
}

/// Read records from JSON Lines text. Blank lines are skipped.
pub fn parse_ingest<R: BufRead>(reader: R) -> Result<Vec<EmbeddedTranscript>> {
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::data(format!("ingest line {}: {e}", idx + 1)))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: IngestRecord = serde_json::from_str(&line)
            .map_err(|e| Error::data(format!("ingest line {}: {e}", idx + 1)))?;
        let et = EmbeddedTranscript {
            transcript_id: rec.transcript_id,
            gold_label: rec.label,
            tokens: rec.tokens,
            vectors: rec.vectors,
            pos_tags: rec.pos_tags,
            utterance_lengths: rec.utterance_lengths,
        };
        et.validate()?;
        out.push(et);
    }
    check_corpus_dimension(&out)?;
    Ok(out)
}

pub fn read_ingest(path: &Path) -> Result<Vec<EmbeddedTranscript>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_ingest(BufReader::new(file))
}

pub fn write_ingest<W: Write>(mut writer: W, records: &[EmbeddedTranscript]) -> Result<()> {
    for r in records {
        let rec = IngestRecord {
            transcript_id: r.transcript_id.clone(),
            label: r.gold_label,
            tokens: r.tokens.clone(),
            pos_tags: r.pos_tags.clone(),
            vectors: r.vectors.clone(),
            utterance_lengths: r.utterance_lengths.clone(),
        };
        serde_json::to_writer(&mut writer, &rec)?;
        writer
            .write_all(b"\n")
            .map_err(|e| Error::data(format!("writing ingest: {e}")))?;
    }
    Ok(())
}

/// Deterministic pseudo-embedding for `token`.
///
/// The generator seed is the first eight bytes (little endian) of
/// SHA-256(`seed` as 8 little-endian bytes ‖ UTF-8 bytes of `token`). That
/// seed drives a ChaCha8 stream from which `dim` components are drawn
/// uniformly from [-1, 1].
pub fn synth_embed(token: &str, dim: usize, seed: u64) -> Vec<f64> {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(token.as_bytes());
    let digest = hasher.finalize();
    let mut head = [0u8; 8];
    head.copy_from_slice(&digest[..8]);
    let mut rng = ChaCha8Rng::seed_from_u64(u64::from_le_bytes(head));
    let dist = Uniform::new_inclusive(-1.0, 1.0).expect("valid bounds");
    (0..dim).map(|_| dist.sample(&mut rng)).collect()
}

/// Join parsed transcripts with embedding records by id, checking tokens.
pub fn attach(corpus: &[Transcript], records: Vec<EmbeddedTranscript>) -> Result<Vec<EmbeddedTranscript>> {
    let by_id: HashMap<&str, &Transcript> = corpus.iter().map(|t| (t.id.as_str(), t)).collect();
    let mut seen = std::collections::HashSet::new();
    let mut out = Vec::with_capacity(records.len());
    for mut rec in records {
        let Some(t) = by_id.get(rec.transcript_id.as_str()) else {
            return Err(Error::data(format!("unknown transcript {}", rec.transcript_id)));
        };
        if let Some(i) = first_divergence(&t.tokens, &rec.tokens) {
            return Err(Error::data(format!("{}: token mismatch at {i}", rec.transcript_id)));
        }
        if t.gold_label.is_some() {
            rec.gold_label = t.gold_label;
        }
        rec.utterance_lengths = Some(t.utterance_lengths());
        seen.insert(t.id.as_str());
        out.push(rec);
    }
    if let Some(missing) = corpus.iter().find(|t| !seen.contains(t.id.as_str())) {
        return Err(Error::data(format!("no embeddings for transcript {}", missing.id)));
    }
    Ok(out)
}

/// Embed parsed transcripts with [`synth_embed`]; stands in for the extractor.
pub fn embed_synthetic(corpus: &[Transcript], dim: usize, seed: u64) -> Vec<EmbeddedTranscript> {
    corpus
        .iter()
        .map(|t| EmbeddedTranscript {
            transcript_id: t.id.clone(),
            gold_label: t.gold_label,
            tokens: t.tokens.clone(),
            vectors: t.tokens.iter().map(|w| synth_embed(w, dim, seed)).collect(),
            pos_tags: None,
            utterance_lengths: Some(t.utterance_lengths()),
        })
        .collect()
}

fn first_divergence(a: &[String], b: &[String]) -> Option<usize> {
    a.iter()
        .zip(b)
        .position(|(x, y)| x != y)
        .or_else(|| (a.len() != b.len()).then(|| a.len().min(b.len())))
}
