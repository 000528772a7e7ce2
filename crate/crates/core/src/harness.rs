//! Pipeline composition: scoring, per-query prediction, ablations, baselines
//! and the label-word sweep.

use crate::annotator::{categorize_spans, Category, Lexicons};
use crate::assessor::{score, AssessorParams};
use crate::decomposer::{contribution_weights, feature_score, rank_profile, standard_profile, ContributionProfile, StandardProfile};
use crate::embedding::EmbeddedTranscript;
use crate::ensemble::{evaluate, majority_vote, LearnerEntry, MetricsReport, PredictionRecord, DEFAULT_THRESHOLD};
use crate::error::{Error, Result};
use crate::gateway::Gateway;
use crate::prompting::{build_prompt, parse_completion, Demo, FeatHint, LabelPair, PromptSpec, Vote};
use crate::retrieval::{top_k, Ranked, Retrievable, Strategy, DEFAULT_LAMBDA};
use crate::{derive_seed, Class};
use log::debug;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::HashMap;
use std::io::Write;
use std::str::FromStr;

/// A transcript with everything the prompt builder and retrieval need.
#[derive(Debug, Clone, PartialEq)]
pub struct Scored {
    pub id: String,
    pub gold: Option<Class>,
    pub text: String,
    pub categories: Vec<Option<Category>>,
    pub p: Vec<f64>,
    pub profile: ContributionProfile,
    pub s_conf: f64,
    pub s_feat: f64,
    pub mean_embedding: Vec<f64>,
}

impl Retrievable for Scored {
    fn id(&self) -> &str {
        &self.id
    }
    fn profile(&self) -> &ContributionProfile {
        &self.profile
    }
    fn embedding(&self) -> &[f64] {
        &self.mean_embedding
    }
    fn label(&self) -> Option<Class> {
        self.gold
    }
}

/// Score one transcript; `s_feat` is filled in once the standard profile is known.
pub fn score_transcript(t: &EmbeddedTranscript, params: &AssessorParams, lex: &Lexicons) -> Result<Scored> {
    let out = score(t, params)?;
    let categories = categorize_spans(&t.tokens, t.pos_tags.as_deref(), &t.utterance_spans(), lex)?;
    let profile = rank_profile(contribution_weights(&categories, &out.p)?);
    Ok(Scored {
        id: t.transcript_id.clone(),
        gold: t.gold_label,
        text: t.text(),
        categories,
        p: out.p,
        profile,
        s_conf: out.s_conf,
        s_feat: 0.0,
        mean_embedding: t.mean_vector(),
    })
}

#[derive(Debug, Clone)]
pub struct Prepared {
    pub train: Vec<Scored>,
    pub eval: Vec<Scored>,
    pub standard: StandardProfile,
}

/// Score both splits. The standard profile comes from the training split only.
pub fn prepare(
    train: &[EmbeddedTranscript],
    eval: &[EmbeddedTranscript],
    params: &AssessorParams,
    lex: &Lexicons,
) -> Result<Prepared> {
    let mut train: Vec<Scored> = train.iter().map(|t| score_transcript(t, params, lex)).collect::<Result<_>>()?;
    let mut eval: Vec<Scored> = eval.iter().map(|t| score_transcript(t, params, lex)).collect::<Result<_>>()?;
    let profiles: Vec<ContributionProfile> = train.iter().map(|s| s.profile.clone()).collect();
    let standard = standard_profile(&profiles)?;
    for s in train.iter_mut().chain(eval.iter_mut()) {
        s.s_feat = feature_score(&s.profile, &standard);
    }
    train.sort_by(|a, b| a.id.cmp(&b.id));
    eval.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(Prepared { train, eval, standard })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StrategyKind {
    Parsing,
    Semantic,
    Random,
}

impl FromStr for StrategyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "parsing" => Ok(StrategyKind::Parsing),
            "semantic" => Ok(StrategyKind::Semantic),
            "random" => Ok(StrategyKind::Random),
            _ => Err(Error::Config(format!("unknown retrieval strategy {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictConfig {
    pub strategy: StrategyKind,
    pub lambda: (f64, f64),
    pub learners: usize,
    pub shots: usize,
    /// Confidence hint in the prompt and as the tie-break arbiter.
    pub use_confidence: bool,
    pub use_features: bool,
    pub label_pair: LabelPair,
    pub seed: u64,
    pub threshold: f64,
    pub balanced: bool,
}

impl Default for PredictConfig {
    fn default() -> Self {
        Self {
            strategy: StrategyKind::Parsing,
            lambda: DEFAULT_LAMBDA,
            learners: 3,
            shots: 1,
            use_confidence: true,
            use_features: true,
            label_pair: LabelPair::default(),
            seed: 0,
            threshold: DEFAULT_THRESHOLD,
            balanced: false,
        }
    }
}

impl PredictConfig {
    pub fn strategy_for(&self, query_id: &str) -> Strategy {
        match self.strategy {
            StrategyKind::Parsing => Strategy::Parsing {
                lambda1: self.lambda.0,
                lambda2: self.lambda.1,
            },
            StrategyKind::Semantic => Strategy::Semantic,
            StrategyKind::Random => Strategy::Random {
                seed: derive_seed(self.seed, query_id),
            },
        }
    }

    /// Hex SHA-256 of the configuration's JSON form.
    pub fn fingerprint(&self) -> String {
        sha256_hex(serde_json::to_string(self).expect("config serializes").as_bytes())
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Prompts for one query, before dispatch.
struct Plan {
    demo_ids: Vec<Vec<String>>,
    requests: Vec<(String, PromptSpec)>,
}

fn plan_query(query: &Scored, pool: &[Scored], cfg: &PredictConfig) -> Result<Plan> {
    if cfg.learners == 0 {
        return Err(Error::Config("at least one learner is required".into()));
    }
    let by_id: HashMap<&str, &Scored> = pool.iter().map(|s| (s.id.as_str(), s)).collect();
    let k = cfg.learners * cfg.shots;
    let ranked: Vec<Ranked> = if k == 0 {
        Vec::new()
    } else {
        top_k(query, pool, k, cfg.strategy_for(&query.id), cfg.balanced)?
    };

    let conf_hint = cfg.use_confidence.then(|| query.s_conf.clamp(1e-6, 1.0 - 1e-6));
    let mut plan = Plan {
        demo_ids: Vec::with_capacity(cfg.learners),
        requests: Vec::with_capacity(cfg.learners),
    };
    for i in 0..cfg.learners {
        let slice = &ranked[(i * cfg.shots).min(ranked.len())..((i + 1) * cfg.shots).min(ranked.len())];
        let mut demos = Vec::with_capacity(slice.len());
        let mut feats = Vec::with_capacity(slice.len());
        for r in slice {
            let demo = by_id[r.id.as_str()];
            let label = demo.gold.ok_or_else(|| Error::data(format!("demo {} has no label", demo.id)))?;
            demos.push(Demo {
                text: demo.text.clone(),
                label: cfg.label_pair.word_for(label).to_string(),
            });
            feats.push(demo.s_feat);
        }
        let mut spec = PromptSpec::new(query.text.clone(), cfg.label_pair.clone());
        spec.demos = demos;
        spec.conf_hint = conf_hint;
        spec.feat_hint = cfg.use_features.then_some(FeatHint {
            query: query.s_feat,
            demos: feats,
        });
        spec.validate()?;
        plan.demo_ids.push(slice.iter().map(|r| r.id.clone()).collect());
        plan.requests.push((build_prompt(&spec), spec));
    }
    Ok(plan)
}

/// Aggregate the learner completions of one query into a record.
fn assemble(
    query: &Scored,
    cfg: &PredictConfig,
    plan: Plan,
    results: Vec<std::result::Result<crate::gateway::Completion, crate::gateway::GatewayError>>,
    fingerprint: &str,
) -> PredictionRecord {
    let mut learners = Vec::with_capacity(plan.requests.len());
    for ((ids, (prompt, _)), res) in plan.demo_ids.into_iter().zip(plan.requests).zip(results) {
        let (completion, error, vote) = match res {
            Ok(c) => {
                let vote = parse_completion(&c.text, &cfg.label_pair);
                (Some(c.text), None, vote)
            }
            Err(e) => {
                debug!("{}: learner failed, counted as abstention: {e}", query.id);
                (None, Some(e.to_string()), Vote::Abstain)
            }
        };
        learners.push(LearnerEntry {
            demo_ids: ids,
            prompt_sha256: sha256_hex(prompt.as_bytes()),
            completion,
            error,
            vote,
        });
    }
    let votes: Vec<Vote> = learners.iter().map(|l| l.vote).collect();
    let s_conf = cfg.use_confidence.then_some(query.s_conf);
    let (final_label, used_fallback) = majority_vote(&votes, s_conf, cfg.threshold);
    PredictionRecord {
        query_id: query.id.clone(),
        gold: query.gold,
        learners,
        final_label,
        used_fallback,
        s_conf,
        s_feat: cfg.use_features.then_some(query.s_feat),
        config_fingerprint: fingerprint.to_string(),
    }
}

pub fn predict_one(query: &Scored, pool: &[Scored], cfg: &PredictConfig, gateway: &Gateway) -> Result<PredictionRecord> {
    let plan = plan_query(query, pool, cfg)?;
    let results = gateway.complete_batch(&plan.requests);
    Ok(assemble(query, cfg, plan, results, &cfg.fingerprint()))
}

/// Predict every query. All prompts go to the gateway as one batch so its
/// concurrency bound applies across queries; records come back in query order.
pub fn run_predictions(queries: &[Scored], pool: &[Scored], cfg: &PredictConfig, gateway: &Gateway) -> Result<Vec<PredictionRecord>> {
    let plans: Vec<Plan> = queries.iter().map(|q| plan_query(q, pool, cfg)).collect::<Result<_>>()?;
    let all: Vec<(String, PromptSpec)> = plans.iter().flat_map(|p| p.requests.iter().cloned()).collect();
    let mut results = gateway.complete_batch(&all).into_iter();
    let fingerprint = cfg.fingerprint();
    Ok(queries
        .iter()
        .zip(plans)
        .map(|(q, plan)| {
            let n = plan.requests.len();
            let res: Vec<_> = results.by_ref().take(n).collect();
            assemble(q, cfg, plan, res, &fingerprint)
        })
        .collect())
}

pub const ABLATION_MODES: [&str; 4] = ["full", "w/o_confidence", "w/o_features", "w/o_parsing_search"];

pub fn ablation_config(base: &PredictConfig, mode: &str) -> Result<PredictConfig> {
    let mut cfg = base.clone();
    match mode {
        "full" => {}
        "w/o_confidence" => cfg.use_confidence = false,
        "w/o_features" => cfg.use_features = false,
        "w/o_parsing_search" => cfg.strategy = StrategyKind::Random,
        _ => return Err(Error::Config(format!("unknown ablation mode {mode:?}"))),
    }
    Ok(cfg)
}

/// One metrics row per ablation mode over the evaluation split.
pub fn run_ablation(prep: &Prepared, base: &PredictConfig, gateway: &Gateway) -> Result<Vec<(String, MetricsReport)>> {
    ABLATION_MODES
        .iter()
        .map(|mode| {
            let cfg = ablation_config(base, mode)?;
            let records = run_predictions(&prep.eval, &prep.train, &cfg, gateway)?;
            Ok((mode.to_string(), evaluate(&records)?))
        })
        .collect()
}

/// One metrics row per label pair, tagged `Class:ad/hc`.
pub fn run_label_sweep(
    prep: &Prepared,
    pairs: &[LabelPair],
    base: &PredictConfig,
    gateway: &Gateway,
) -> Result<Vec<(String, MetricsReport)>> {
    if pairs.is_empty() {
        return Err(Error::data("empty label pair list"));
    }
    pairs
        .iter()
        .map(|pair| {
            let cfg = PredictConfig {
                label_pair: pair.clone(),
                ..base.clone()
            };
            let records = run_predictions(&prep.eval, &prep.train, &cfg, gateway)?;
            Ok((format!("{}:{}", pair.config_class, pair.tag()), evaluate(&records)?))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Baseline {
    Vanilla,
    Semantic,
    Logits,
    Ensemble,
}

impl Baseline {
    pub const ALL: [Baseline; 4] = [Baseline::Vanilla, Baseline::Semantic, Baseline::Logits, Baseline::Ensemble];

    pub fn name(self) -> &'static str {
        match self {
            Baseline::Vanilla => "vanilla",
            Baseline::Semantic => "semantic",
            Baseline::Logits => "logits",
            Baseline::Ensemble => "ensemble",
        }
    }

    /// The pipeline configuration this baseline degenerates to.
    pub fn config(self, base: &PredictConfig, shots: usize) -> PredictConfig {
        let (strategy, learners, use_confidence) = match self {
            Baseline::Vanilla => (StrategyKind::Random, 1, false),
            Baseline::Semantic => (StrategyKind::Semantic, 1, false),
            Baseline::Logits => (StrategyKind::Random, 1, true),
            Baseline::Ensemble => (StrategyKind::Random, 3, false),
        };
        PredictConfig {
            strategy,
            learners,
            shots,
            use_confidence,
            use_features: false,
            ..base.clone()
        }
    }
}

impl FromStr for Baseline {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Baseline::ALL
            .into_iter()
            .find(|b| b.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown baseline {s:?}")))
    }
}

pub fn run_baseline(
    prep: &Prepared,
    baseline: Baseline,
    shots: usize,
    base: &PredictConfig,
    gateway: &Gateway,
) -> Result<(Vec<PredictionRecord>, MetricsReport)> {
    let cfg = baseline.config(base, shots);
    let records = run_predictions(&prep.eval, &prep.train, &cfg, gateway)?;
    let metrics = evaluate(&records)?;
    Ok((records, metrics))
}

pub fn write_predictions<W: Write>(mut w: W, records: &[PredictionRecord]) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        writeln!(w).map_err(|e| Error::data(format!("write failed: {e}")))?;
    }
    Ok(())
}

pub fn read_predictions<R: std::io::BufRead>(reader: R) -> Result<Vec<PredictionRecord>> {
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::data(format!("read failed: {e}")))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| Error::data(format!("predictions line {}: {e}", idx + 1)))?;
        out.push(rec);
    }
    Ok(out)
}

pub const SWEEP_PLOT_HEADER: &str = "config_class,ad_word,hc_word,acc,f1";

/// Plot data for the label-word sweep: one row per pair, blanks for absent values.
pub fn sweep_plot_csv(pairs: &[LabelPair], rows: &[(String, MetricsReport)]) -> String {
    let mut out = String::from(SWEEP_PLOT_HEADER);
    out.push('\n');
    let cell = |v: Option<f64>| v.map_or_else(String::new, |x| format!("{x:.2}"));
    for (pair, (_, m)) in pairs.iter().zip(rows) {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            pair.config_class,
            pair.ad_word,
            pair.hc_word,
            cell(m.acc),
            cell(m.f1)
        ));
    }
    out
}
