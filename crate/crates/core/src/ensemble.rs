//! Majority voting over learner outputs, prediction records and metrics.

use crate::error::{Error, Result};
use crate::prompting::Vote;
use crate::Class;
use serde::{Deserialize, Serialize};

pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// Strict majority over non-abstaining votes. On a tie (including all
/// abstentions) the label comes from `s_conf >= threshold`; with no confidence
/// available the tie goes to HC. The flag reports whether the fallback fired.
pub fn majority_vote(votes: &[Vote], s_conf: Option<f64>, threshold: f64) -> (Class, bool) {
    let ad = votes.iter().filter(|v| **v == Vote::Ad).count();
    let hc = votes.iter().filter(|v| **v == Vote::Hc).count();
    if ad > hc {
        (Class::Ad, false)
    } else if hc > ad {
        (Class::Hc, false)
    } else {
        match s_conf {
            Some(c) if c >= threshold => (Class::Ad, true),
            _ => (Class::Hc, true),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnerEntry {
    pub demo_ids: Vec<String>,
    pub prompt_sha256: String,
    pub completion: Option<String>,
    pub error: Option<String>,
    pub vote: Vote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub query_id: String,
    pub gold: Option<Class>,
    pub learners: Vec<LearnerEntry>,
    pub final_label: Class,
    pub used_fallback: bool,
    pub s_conf: Option<f64>,
    pub s_feat: Option<f64>,
    pub config_fingerprint: String,
}

/// Percentages are absent when their denominator is zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub acc: Option<f64>,
    pub pre: Option<f64>,
    pub rec: Option<f64>,
    pub f1: Option<f64>,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tn: usize,
}

fn pct(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| 100.0 * num as f64 / den as f64)
}

/// Metrics with AD as the positive class.
pub fn compute_metrics(pairs: &[(Class, Class)]) -> Result<MetricsReport> {
    if pairs.is_empty() {
        return Err(Error::data("no predictions to evaluate"));
    }
    let (mut tp, mut fp, mut fn_, mut tn) = (0, 0, 0, 0);
    for &(pred, gold) in pairs {
        match (pred, gold) {
            (Class::Ad, Class::Ad) => tp += 1,
            (Class::Ad, Class::Hc) => fp += 1,
            (Class::Hc, Class::Ad) => fn_ += 1,
            (Class::Hc, Class::Hc) => tn += 1,
        }
    }
    let (pre, rec) = (pct(tp, tp + fp), pct(tp, tp + fn_));
    let f1 = match (pre, rec) {
        (Some(p), Some(r)) if p + r > 0.0 => Some(2.0 * p * r / (p + r)),
        _ => None,
    };
    Ok(MetricsReport {
        acc: pct(tp + tn, pairs.len()),
        pre,
        rec,
        f1,
        tp,
        fp,
        fn_,
        tn,
    })
}

/// Metrics over prediction records; every record needs a gold label.
pub fn evaluate(records: &[PredictionRecord]) -> Result<MetricsReport> {
    let pairs = records
        .iter()
        .map(|r| {
            r.gold
                .map(|g| (r.final_label, g))
                .ok_or_else(|| Error::data(format!("{}: missing gold label", r.query_id)))
        })
        .collect::<Result<Vec<_>>>()?;
    compute_metrics(&pairs)
}

pub const METRICS_CSV_HEADER: &str = "mode_or_pair,acc,pre,rec,f1,tp,fp,fn,tn";

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.2}"))
}

pub fn metrics_csv_row(name: &str, m: &MetricsReport) -> String {
    format!(
        "{name},{},{},{},{},{},{},{},{}",
        cell(m.acc),
        cell(m.pre),
        cell(m.rec),
        cell(m.f1),
        m.tp,
        m.fp,
        m.fn_,
        m.tn
    )
}

pub fn metrics_csv(rows: &[(String, MetricsReport)]) -> String {
    let mut out = String::from(METRICS_CSV_HEADER);
    out.push('\n');
    for (name, m) in rows {
        out.push_str(&metrics_csv_row(name, m));
        out.push('\n');
    }
    out
}
