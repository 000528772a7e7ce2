//! Demonstration search.
//!
//! Parsing similarity combines the agreement of two category rankings with
//! the cosine of their weight vectors:
//!
//! ```text
//! sim = λ1 · (1 − ND / ND_MAX) + λ2 · cos(R_q, R_c in q's order)
//! ND  = Σ_{i=1..6} |t_i − i| / i
//! ```
//!
//! where `t_i` is the 1-based position in the query ranking of the category
//! the candidate ranks at position `i`. ND is asymmetric; the query always
//! comes first.

use crate::annotator::Category;
use crate::decomposer::ContributionProfile;
use crate::error::{Error, Result};
use crate::Class;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::cmp::Ordering;

/// Largest raw ND over all 720 rankings against a fixed one (= 521/60),
/// reached e.g. by candidate order (6, 5, 4, 1, 2, 3) against the identity.
pub const ND_MAX: f64 = 8.683333333333334;

pub const DEFAULT_LAMBDA: (f64, f64) = (0.5, 0.5);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimilarityBreakdown {
    pub nd_raw: f64,
    pub nd_normalized: f64,
    pub cosine_term: f64,
    pub sim: f64,
    pub lambda1: f64,
    pub lambda2: f64,
}

fn check_permutation(rank: &[Category; 6]) -> Result<()> {
    let mut seen = [false; 6];
    for c in rank {
        if std::mem::replace(&mut seen[c.index()], true) {
            return Err(Error::data(format!("ranking {rank:?} is not a permutation")));
        }
    }
    Ok(())
}

/// Raw and normalised position distance of `candidate` relative to `query`.
pub fn position_distance(query: &[Category; 6], candidate: &[Category; 6]) -> Result<(f64, f64)> {
    check_permutation(query)?;
    check_permutation(candidate)?;
    let mut query_pos = [0usize; 6];
    for (pos, c) in query.iter().enumerate() {
        query_pos[c.index()] = pos + 1;
    }
    let raw: f64 = candidate
        .iter()
        .enumerate()
        .map(|(idx, c)| {
            let i = idx + 1;
            query_pos[c.index()].abs_diff(i) as f64 / i as f64
        })
        .sum();
    Ok((raw, raw / ND_MAX))
}

/// Maximum raw ND, found by enumerating every ranking against the canonical one.
pub fn enumerate_nd_max() -> f64 {
    let mut best: f64 = 0.0;
    for perm in permutations6() {
        let (raw, _) = position_distance(&Category::ALL, &perm).expect("valid permutation");
        best = best.max(raw);
    }
    best
}

/// All 720 orderings of the six categories (Heap's algorithm).
pub fn permutations6() -> Vec<[Category; 6]> {
    fn heap(k: usize, a: &mut [Category; 6], out: &mut Vec<[Category; 6]>) {
        if k == 1 {
            out.push(*a);
            return;
        }
        heap(k - 1, a, out);
        for i in 0..k - 1 {
            if k.is_multiple_of(2) {
                a.swap(i, k - 1);
            } else {
                a.swap(0, k - 1);
            }
            heap(k - 1, a, out);
        }
    }
    let mut a = Category::ALL;
    let mut out = Vec::with_capacity(720);
    heap(6, &mut a, &mut out);
    out
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        (dot / (na * nb)).clamp(-1.0, 1.0)
    }
}

pub fn parsing_similarity(
    query: &ContributionProfile,
    candidate: &ContributionProfile,
    lambda1: f64,
    lambda2: f64,
) -> SimilarityBreakdown {
    let (nd_raw, nd_normalized) =
        position_distance(&query.rank, &candidate.rank).expect("profiles carry permutations");
    let aligned = query.rank.map(|c| candidate.omega[c.index()]);
    let cosine_term = cosine(&query.array, &aligned);
    SimilarityBreakdown {
        nd_raw,
        nd_normalized,
        cosine_term,
        sim: lambda1 * (1.0 - nd_normalized) + lambda2 * cosine_term,
        lambda1,
        lambda2,
    }
}

/// What retrieval needs to know about a transcript.
pub trait Retrievable {
    fn id(&self) -> &str;
    fn profile(&self) -> &ContributionProfile;
    fn embedding(&self) -> &[f64];
    fn label(&self) -> Option<Class>;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Strategy {
    Parsing { lambda1: f64, lambda2: f64 },
    Semantic,
    Random { seed: u64 },
}

impl Strategy {
    pub fn parsing() -> Self {
        Strategy::Parsing {
            lambda1: DEFAULT_LAMBDA.0,
            lambda2: DEFAULT_LAMBDA.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ranked {
    pub id: String,
    pub score: f64,
    pub label: Option<Class>,
    pub breakdown: Option<SimilarityBreakdown>,
}

/// The `k` best demonstrations for `query` from `pool`. Pool entries with the
/// query's id are skipped. With `balanced` the two classes alternate,
/// starting from the class of the best candidate.
pub fn top_k<T: Retrievable>(query: &T, pool: &[T], k: usize, strategy: Strategy, balanced: bool) -> Result<Vec<Ranked>> {
    let candidates: Vec<&T> = pool.iter().filter(|c| c.id() != query.id()).collect();
    if candidates.is_empty() {
        return Err(Error::data("empty demonstration pool"));
    }
    if k > candidates.len() {
        return Err(Error::data(format!("k = {k} exceeds pool size {}", candidates.len())));
    }

    let mut ranked: Vec<Ranked> = match strategy {
        Strategy::Parsing { lambda1, lambda2 } => candidates
            .iter()
            .map(|c| {
                let b = parsing_similarity(query.profile(), c.profile(), lambda1, lambda2);
                Ranked {
                    id: c.id().to_string(),
                    score: b.sim,
                    label: c.label(),
                    breakdown: Some(b),
                }
            })
            .collect(),
        Strategy::Semantic => candidates
            .iter()
            .map(|c| Ranked {
                id: c.id().to_string(),
                score: cosine(query.embedding(), c.embedding()),
                label: c.label(),
                breakdown: None,
            })
            .collect(),
        Strategy::Random { .. } => candidates
            .iter()
            .map(|c| Ranked {
                id: c.id().to_string(),
                score: 0.0,
                label: c.label(),
                breakdown: None,
            })
            .collect(),
    };

    match strategy {
        Strategy::Random { seed } => {
            ranked.sort_by(|a, b| a.id.cmp(&b.id));
            ranked.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        }
        _ => ranked.sort_by(|a, b| b.score.partial_cmp(&a.score).unwrap_or(Ordering::Equal).then_with(|| a.id.cmp(&b.id))),
    }

    if balanced {
        ranked = interleave_classes(ranked);
    }
    ranked.truncate(k);
    Ok(ranked)
}

fn interleave_classes(ranked: Vec<Ranked>) -> Vec<Ranked> {
    let Some(first) = ranked.first().and_then(|r| r.label) else {
        return ranked;
    };
    let (mut same, mut other, mut rest) = (Vec::new(), Vec::new(), Vec::new());
    for r in ranked {
        match r.label {
            Some(l) if l == first => same.push(r),
            Some(_) => other.push(r),
            None => rest.push(r),
        }
    }
    let mut out = Vec::with_capacity(same.len() + other.len() + rest.len());
    let (mut a, mut b) = (same.into_iter(), other.into_iter());
    loop {
        match (a.next(), b.next()) {
            (None, None) => break,
            (x, y) => out.extend(x.into_iter().chain(y)),
        }
    }
    out.extend(rest);
    out
}

pub const TRACE_CSV_HEADER: &str = "query_id,rank,demo_id,sim,nd_raw,nd_normalized,cosine_term";

/// Retrieval trace rows; similarity columns are empty for non-parsing strategies.
pub fn trace_rows(query_id: &str, ranked: &[Ranked]) -> Vec<String> {
    ranked
        .iter()
        .enumerate()
        .map(|(i, r)| match &r.breakdown {
            Some(b) => format!(
                "{query_id},{},{},{},{},{},{}",
                i + 1,
                r.id,
                b.sim,
                b.nd_raw,
                b.nd_normalized,
                b.cosine_term
            ),
            None => format!("{query_id},{},{},{},,,", i + 1, r.id, r.score),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decomposer::rank_profile;
    use approx::assert_abs_diff_eq;
    use Category::*;

    struct Item {
        id: String,
        profile: ContributionProfile,
        emb: Vec<f64>,
        label: Option<Class>,
    }

    impl Retrievable for Item {
        fn id(&self) -> &str {
            &self.id
        }
        fn profile(&self) -> &ContributionProfile {
            &self.profile
        }
        fn embedding(&self) -> &[f64] {
            &self.emb
        }
        fn label(&self) -> Option<Class> {
            self.label
        }
    }

    fn item(id: &str, omega: [f64; 6], emb: Vec<f64>, label: Option<Class>) -> Item {
        Item {
            id: id.into(),
            profile: rank_profile(omega),
            emb,
            label,
        }
    }

    #[test]
    fn nd_spot_values() {
        let q = Category::ALL;
        assert_eq!(position_distance(&q, &q).unwrap(), (0.0, 0.0));
        let mut swapped = q;
        swapped.swap(4, 5);
        assert_abs_diff_eq!(position_distance(&q, &swapped).unwrap().0, 1.0 / 5.0 + 1.0 / 6.0, epsilon = 1e-12);
        let mut rev = q;
        rev.reverse();
        assert_abs_diff_eq!(position_distance(&q, &rev).unwrap().0, 8.516667, epsilon = 1e-6);
    }

    #[test]
    fn nd_rejects_non_permutations() {
        let bad = [Subject, Subject, Action, Location, Filler, Pronoun];
        assert!(position_distance(&Category::ALL, &bad).is_err());
        assert!(position_distance(&bad, &Category::ALL).is_err());
    }

    #[test]
    fn nd_max_matches_enumeration() {
        assert_eq!(permutations6().len(), 720);
        assert_eq!(enumerate_nd_max(), ND_MAX);
    }

    #[test]
    fn similarity_examples() {
        let q = rank_profile([0.9, 0.4, 0.7, 0.1, 0.3, 0.2]);
        let b = parsing_similarity(&q, &q, 0.5, 0.5);
        assert_abs_diff_eq!(b.sim, 1.0, epsilon = 1e-12);

        // same ranking, cosine 0.6: (1, 0, ...) in rank order vs (0.6, 0.8, ...)
        let q = rank_profile([1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        let c2 = ContributionProfile {
            omega: [0.6, 0.8, 0.0, 0.0, 0.0, 0.0],
            array: [0.8, 0.6, 0.0, 0.0, 0.0, 0.0],
            rank: Category::ALL,
        };
        let b = parsing_similarity(&q, &c2, 0.5, 0.5);
        assert_eq!(b.nd_raw, 0.0);
        assert_abs_diff_eq!(b.cosine_term, 0.6, epsilon = 1e-12);
        assert_abs_diff_eq!(b.sim, 0.8, epsilon = 1e-12);
    }

    #[test]
    fn maximal_distance_and_orthogonal_weights_give_zero() {
        // query ranks Subject..Pronoun; candidate ranking at ND_MAX is
        // positions (6,5,4,1,2,3) of the query, i.e. Pronoun, Filler, Location, Subject, Object, Action
        let query = ContributionProfile {
            omega: [1.0, 0.0, 0.0, 0.0, 0.0, 0.0],
            array: [1.0, 0.0, 0.0, 0.0, 0.0, 0.0],
            rank: Category::ALL,
        };
        let cand = ContributionProfile {
            omega: [0.0, 0.0, 0.0, 0.0, 0.0, 2.0],
            array: [2.0, 0.0, 0.0, 0.0, 0.0, 0.0],
            rank: [Pronoun, Filler, Location, Subject, Object, Action],
        };
        let b = parsing_similarity(&query, &cand, 0.5, 0.5);
        assert_eq!(b.nd_normalized, 1.0);
        assert_eq!(b.cosine_term, 0.0);
        assert_eq!(b.sim, 0.0);
    }

    #[test]
    fn duplicate_profile_ranks_first() {
        let q = item("q", [0.5, 0.1, 0.9, 0.0, 0.3, 0.2], vec![1.0], None);
        let pool = vec![
            item("a", [0.1, 0.9, 0.0, 0.4, 0.0, 0.3], vec![1.0], None),
            item("b", [0.5, 0.1, 0.9, 0.0, 0.3, 0.2], vec![1.0], None),
            item("c", [0.0, 0.0, 0.2, 0.9, 0.8, 0.1], vec![1.0], None),
        ];
        let r = top_k(&q, &pool, 3, Strategy::parsing(), false).unwrap();
        assert_eq!(r[0].id, "b");
        let mut ids: Vec<_> = r.iter().map(|x| x.id.clone()).collect();
        ids.sort();
        assert_eq!(ids, ["a", "b", "c"]);
    }

    #[test]
    fn semantic_prefers_identical_embedding() {
        let q = item("q", [0.0; 6], vec![0.3, -0.2, 0.9], None);
        let pool = vec![
            item("a", [0.0; 6], vec![-0.3, 0.2, 0.1], None),
            item("b", [0.0; 6], vec![0.3, -0.2, 0.9], None),
            item("q", [0.0; 6], vec![0.3, -0.2, 0.9], None),
        ];
        let r = top_k(&q, &pool, 1, Strategy::Semantic, false).unwrap();
        assert_eq!(r[0].id, "b");
    }

    #[test]
    fn random_is_seeded() {
        let q = item("q", [0.0; 6], vec![1.0], None);
        let pool: Vec<Item> = (0..10).map(|i| item(&format!("p{i}"), [0.0; 6], vec![1.0], None)).collect();
        let a = top_k(&q, &pool, 4, Strategy::Random { seed: 5 }, false).unwrap();
        let b = top_k(&q, &pool, 4, Strategy::Random { seed: 5 }, false).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn errors_on_empty_pool_and_large_k() {
        let q = item("q", [0.0; 6], vec![1.0], None);
        assert!(top_k(&q, &[], 1, Strategy::parsing(), false).is_err());
        let pool = vec![item("a", [0.0; 6], vec![1.0], None)];
        assert!(top_k(&q, &pool, 2, Strategy::parsing(), false).is_err());
    }

    #[test]
    fn balanced_alternates_classes() {
        let q = item("q", [1.0, 0.5, 0.2, 0.0, 0.0, 0.0], vec![1.0], None);
        let pool = vec![
            item("a", [1.0, 0.5, 0.2, 0.0, 0.0, 0.0], vec![1.0], Some(Class::Ad)),
            item("b", [1.0, 0.5, 0.21, 0.0, 0.0, 0.0], vec![1.0], Some(Class::Ad)),
            item("c", [0.0, 0.0, 0.0, 0.0, 0.5, 1.0], vec![1.0], Some(Class::Hc)),
        ];
        let r = top_k(&q, &pool, 3, Strategy::parsing(), true).unwrap();
        let labels: Vec<_> = r.iter().map(|x| x.label.unwrap()).collect();
        assert_eq!(labels, [Class::Ad, Class::Hc, Class::Ad]);
    }

    #[test]
    fn trace_format() {
        let q = item("q", [1.0, 0.0, 0.0, 0.0, 0.0, 0.0], vec![1.0], None);
        let pool = vec![item("a", [1.0, 0.0, 0.0, 0.0, 0.0, 0.0], vec![1.0], None)];
        let r = top_k(&q, &pool, 1, Strategy::parsing(), false).unwrap();
        assert_eq!(trace_rows("q", &r), ["q,1,a,1,0,0,1"]);
    }
}
