//! Category contribution weights, their rank, the training-set standard
//! profile and the feature score derived from it.

use crate::annotator::Category;
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Per-category weights indexed by [`Category::index`].
pub type Omega = [f64; 6];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContributionProfile {
    pub omega: Omega,
    /// Weights sorted descending.
    pub array: [f64; 6],
    /// Categories in the order of `array`.
    pub rank: [Category; 6],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StandardProfile {
    pub mean_omega: Omega,
    pub array: [f64; 6],
    pub rank: [Category; 6],
    pub softmax: [f64; 6],
}

/// `ω_k = Σ_i p_i · [category_i = k]`; uncategorized tokens are skipped.
pub fn contribution_weights(categories: &[Option<Category>], p: &[f64]) -> Result<Omega> {
    if categories.len() != p.len() {
        return Err(Error::Length {
            what: "categories vs contributions",
            left: categories.len(),
            right: p.len(),
        });
    }
    let mut omega = [0.0; 6];
    for (cat, &pi) in categories.iter().zip(p) {
        if let Some(c) = cat {
            omega[c.index()] += pi;
        }
    }
    Ok(omega)
}

/// Categories sorted by descending weight, ties in canonical order.
pub fn rank_categories(omega: &Omega) -> [Category; 6] {
    let mut rank = Category::ALL;
    // stable sort keeps canonical order among equal weights
    rank.sort_by(|a, b| omega[b.index()].total_cmp(&omega[a.index()]));
    rank
}

pub fn rank_profile(omega: Omega) -> ContributionProfile {
    let rank = rank_categories(&omega);
    ContributionProfile {
        omega,
        array: rank.map(|c| omega[c.index()]),
        rank,
    }
}

pub fn softmax6(x: &[f64; 6]) -> [f64; 6] {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps = x.map(|v| (v - max).exp());
    let total: f64 = exps.iter().sum();
    exps.map(|v| v / total)
}

/// Mean category weights over the training profiles and everything derived from them.
pub fn standard_profile(profiles: &[ContributionProfile]) -> Result<StandardProfile> {
    if profiles.is_empty() {
        return Err(Error::data("standard profile needs at least one training transcript"));
    }
    let mut mean_omega = [0.0; 6];
    for p in profiles {
        for (m, w) in mean_omega.iter_mut().zip(p.omega) {
            *m += w;
        }
    }
    let n = profiles.len() as f64;
    mean_omega.iter_mut().for_each(|m| *m /= n);
    let rank = rank_categories(&mean_omega);
    let array = rank.map(|c| mean_omega[c.index()]);
    Ok(StandardProfile {
        mean_omega,
        array,
        rank,
        softmax: softmax6(&array),
    })
}

/// The transcript's weights reordered by the standard rank, dotted with the
/// softmax of the standard array.
pub fn feature_score(profile: &ContributionProfile, standard: &StandardProfile) -> f64 {
    standard
        .rank
        .iter()
        .zip(&standard.softmax)
        .map(|(c, s)| profile.omega[c.index()] * s)
        .sum()
}

/// Audit rows `transcript_id,category,omega,rank_position,s_feat`, one per
/// category in rank order (positions start at 1).
pub fn profile_csv_rows(transcript_id: &str, profile: &ContributionProfile, s_feat: f64) -> Vec<String> {
    profile
        .rank
        .iter()
        .enumerate()
        .map(|(pos, c)| format!("{transcript_id},{c},{},{},{s_feat}", profile.omega[c.index()], pos + 1))
        .collect()
}

pub const PROFILE_CSV_HEADER: &str = "transcript_id,category,omega,rank_position,s_feat";

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use Category::*;

    fn omega_of(pairs: &[(Category, f64)]) -> Omega {
        let mut o = [0.0; 6];
        for (c, w) in pairs {
            o[c.index()] = *w;
        }
        o
    }

    #[test]
    fn weights_are_indicator_sums() {
        let o = contribution_weights(&[Some(Subject), Some(Action), Some(Filler)], &[0.8, 0.6, 0.1]).unwrap();
        assert_eq!(o, omega_of(&[(Subject, 0.8), (Action, 0.6), (Filler, 0.1)]));
        let o = contribution_weights(&[Some(Action), Some(Action)], &[0.3, 0.4]).unwrap();
        assert_abs_diff_eq!(o[Action.index()], 0.7, epsilon = 1e-15);
        assert_eq!(contribution_weights(&[None, None], &[0.9, 0.2]).unwrap(), [0.0; 6]);
        assert!(contribution_weights(&[None], &[0.1, 0.2]).is_err());
    }

    #[test]
    fn ranking_with_canonical_tie_break() {
        let p = rank_profile(omega_of(&[(Subject, 0.8), (Action, 0.6), (Filler, 0.1)]));
        assert_eq!(p.rank, [Subject, Action, Filler, Object, Location, Pronoun]);
        assert_eq!(p.array, [0.8, 0.6, 0.1, 0.0, 0.0, 0.0]);
        assert_eq!(rank_profile([0.3; 6]).rank, Category::ALL);
        assert_eq!(rank_profile(omega_of(&[(Pronoun, 1.0)])).rank[0], Pronoun);
    }

    #[test]
    fn standard_profile_is_the_mean() {
        let one = rank_profile(omega_of(&[(Object, 0.4), (Action, 0.2)]));
        let s = standard_profile(std::slice::from_ref(&one)).unwrap();
        assert_eq!(s.mean_omega, one.omega);

        let other = rank_profile(omega_of(&[(Object, 0.1), (Action, 0.4)]));
        let s = standard_profile(&[one, other]).unwrap();
        assert_abs_diff_eq!(s.mean_omega[Action.index()], 0.3, epsilon = 1e-15);

        let zeros = standard_profile(&[rank_profile([0.0; 6])]).unwrap();
        for v in zeros.softmax {
            assert_abs_diff_eq!(v, 1.0 / 6.0, epsilon = 1e-15);
        }
        assert!(standard_profile(&[]).is_err());
    }

    #[test]
    fn feature_score_examples() {
        let std0 = standard_profile(&[rank_profile([0.0; 6])]).unwrap();
        assert_eq!(feature_score(&rank_profile([0.0; 6]), &std0), 0.0);
        // uniform softmax, weight 6 on the first standard category
        let q = rank_profile(omega_of(&[(Subject, 6.0)]));
        assert_abs_diff_eq!(feature_score(&q, &std0), 1.0, epsilon = 1e-12);

        // two-transcript fixture: mean ω = (0.5, 0.25, 1.0, 0, 0.1, 0)
        let a = rank_profile([0.6, 0.5, 1.2, 0.0, 0.2, 0.0]);
        let b = rank_profile([0.4, 0.0, 0.8, 0.0, 0.0, 0.0]);
        let std = standard_profile(&[a, b]).unwrap();
        assert_eq!(std.rank, [Action, Subject, Object, Filler, Location, Pronoun]);
        let mean = rank_profile(std.mean_omega);
        // softmax of (1.0, 0.5, 0.25, 0.1, 0, 0) computed independently
        let ex: Vec<f64> = [1.0f64, 0.5, 0.25, 0.1, 0.0, 0.0].iter().map(|v| v.exp()).collect();
        let z: f64 = ex.iter().sum();
        let expected = [1.0, 0.5, 0.25, 0.1, 0.0, 0.0].iter().zip(&ex).map(|(w, e)| w * e / z).sum::<f64>();
        assert_abs_diff_eq!(feature_score(&mean, &std), expected, epsilon = 1e-12);
    }

    #[test]
    fn csv_rows_follow_rank() {
        let p = rank_profile(omega_of(&[(Filler, 0.5)]));
        let rows = profile_csv_rows("t1", &p, 0.25);
        assert_eq!(rows[0], "t1,Filler,0.5,1,0.25");
        assert_eq!(rows.len(), 6);
    }

    fn cat_strategy() -> impl Strategy<Value = Option<Category>> {
        prop_oneof![Just(None), (0usize..6).prop_map(|i| Some(Category::ALL[i]))]
    }

    proptest! {
        #[test]
        fn token_order_does_not_change_profile(
            items in proptest::collection::vec((cat_strategy(), 0.0f64..1.0), 0..30),
            rot in 0usize..30,
        ) {
            let (cats, p): (Vec<_>, Vec<_>) = items.iter().cloned().unzip();
            let mut shuffled = items.clone();
            if !shuffled.is_empty() {
                let k = rot % shuffled.len();
                shuffled.rotate_left(k);
                shuffled.reverse();
            }
            let (cats2, p2): (Vec<_>, Vec<_>) = shuffled.into_iter().unzip();
            let a = rank_profile(contribution_weights(&cats, &p).unwrap());
            let b = rank_profile(contribution_weights(&cats2, &p2).unwrap());
            prop_assert_eq!(a.rank, b.rank);
            for (x, y) in a.omega.iter().zip(&b.omega) {
                prop_assert!((x - y).abs() <= 1e-12);
            }
        }

        #[test]
        fn standard_softmax_sums_to_one(omegas in proptest::collection::vec(proptest::array::uniform6(0.0f64..20.0), 1..10)) {
            let profiles: Vec<_> = omegas.into_iter().map(rank_profile).collect();
            let s = standard_profile(&profiles).unwrap();
            prop_assert!((s.softmax.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            prop_assert_eq!(s.rank, rank_categories(&s.mean_omega));
        }
    }
}
