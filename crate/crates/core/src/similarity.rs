//! Latent-space state similarity and the normalized selection criterion.
//!
//! Similarity is the negated Euclidean distance between latents. The
//! criterion `F` rescales an offline state's best similarity to any expert
//! state by the best (`S+`) and worst (`S-`) such values over the offline
//! population, so `F` lies in `[0, 1]` on that population.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::StateId;
use crate::error::{Result, SbrError};

/// Smallest accepted `S+ - S-`.
pub const MIN_STATS_GAP: f64 = 1e-9;

/// `-||a - b||_2`, without a dimension check.
#[inline]
pub(crate) fn neg_distance(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for (x, y) in a.iter().zip(b) {
        let d = x - y;
        s += d * d;
    }
    -s.sqrt()
}

pub fn similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(SbrError::dim("similarity operands", a.len(), b.len()));
    }
    Ok(neg_distance(a, b))
}

/// Exact brute-force nearest-expert search over encoded expert-side states.
#[derive(Clone, Debug, Default)]
pub struct SimilarityIndex {
    latents: Vec<Vec<f64>>,
    ids: Vec<StateId>,
    dim: usize,
}

impl SimilarityIndex {
    pub fn new(latents: Vec<Vec<f64>>, ids: Vec<StateId>) -> Result<Self> {
        if latents.len() != ids.len() {
            return Err(SbrError::dim("similarity index ids", latents.len(), ids.len()));
        }
        let dim = latents.first().map(Vec::len).unwrap_or(0);
        for (z, id) in latents.iter().zip(&ids) {
            if z.len() != dim {
                return Err(SbrError::dim(format!("latent of state {id}"), dim, z.len()));
            }
            if z.iter().any(|v| !v.is_finite()) {
                return Err(SbrError::Contract(format!("latent of state {id} is not finite")));
            }
        }
        Ok(SimilarityIndex { latents, ids, dim })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn ids(&self) -> &[StateId] {
        &self.ids
    }

    /// `max_e S(z_e, z)` and the id attaining it; ties go to the smallest id.
    pub fn max_similarity(&self, z: &[f64]) -> Result<(f64, StateId)> {
        if self.is_empty() {
            return Err(SbrError::Contract("similarity search on an empty expert index".into()));
        }
        if z.len() != self.dim {
            return Err(SbrError::dim("similarity query", self.dim, z.len()));
        }
        let mut best = (f64::NEG_INFINITY, self.ids[0]);
        for (e, id) in self.latents.iter().zip(&self.ids) {
            let s = neg_distance(e, z);
            if s > best.0 || (s == best.0 && *id < best.1) {
                best = (s, *id);
            }
        }
        Ok(best)
    }

    /// [`max_similarity`](Self::max_similarity) for many queries, in parallel.
    pub fn max_similarities(&self, queries: &[Vec<f64>]) -> Result<Vec<(f64, StateId)>> {
        queries.par_iter().map(|z| self.max_similarity(z)).collect()
    }
}

/// Normalization constants of the selection criterion.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CriterionStats {
    pub s_plus: f64,
    pub s_minus: f64,
}

impl CriterionStats {
    /// Extremes of precomputed best-expert similarities.
    pub fn from_max_similarities(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(SbrError::Contract("criterion stats need at least one offline state".into()));
        }
        let s_plus = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let s_minus = values.iter().copied().fold(f64::INFINITY, f64::min);
        let stats = CriterionStats { s_plus, s_minus };
        stats.check()?;
        Ok(stats)
    }

    pub fn check(&self) -> Result<()> {
        let gap = self.s_plus - self.s_minus;
        if !(gap >= MIN_STATS_GAP) || !self.s_plus.is_finite() || !self.s_minus.is_finite() {
            return Err(SbrError::DegenerateStats { gap });
        }
        Ok(())
    }

    /// `(m - S-) / (S+ - S-)` for a best-expert similarity `m`.
    pub fn normalize(&self, max_sim: f64) -> f64 {
        (max_sim - self.s_minus) / (self.s_plus - self.s_minus)
    }
}

/// `S+` and `S-` over the latents of an offline population.
pub fn compute_stats(index: &SimilarityIndex, offline_latents: &[Vec<f64>]) -> Result<CriterionStats> {
    if offline_latents.is_empty() {
        return Err(SbrError::Contract("criterion stats need at least one offline state".into()));
    }
    let sims: Vec<f64> = index.max_similarities(offline_latents)?.into_iter().map(|(s, _)| s).collect();
    CriterionStats::from_max_similarities(&sims)
}

/// Selection criterion of one offline latent.
pub fn criterion_f(stats: &CriterionStats, index: &SimilarityIndex, z: &[f64]) -> Result<f64> {
    stats.check()?;
    let (m, _) = index.max_similarity(z)?;
    Ok(stats.normalize(m))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn index_1d(values: &[f64]) -> SimilarityIndex {
        SimilarityIndex::new(
            values.iter().map(|&v| vec![v]).collect(),
            (0..values.len()).map(|t| StateId::new(0, t)).collect(),
        )
        .unwrap()
    }

    #[test]
    fn self_similarity_is_zero_and_triangle_is_minus_five() {
        assert_eq!(similarity(&[1.5, -2.0], &[1.5, -2.0]).unwrap(), 0.0);
        assert_eq!(similarity(&[0.0, 0.0], &[3.0, 4.0]).unwrap(), -5.0);
        assert!(similarity(&[0.0], &[0.0, 1.0]).is_err());
    }

    #[test]
    fn max_similarity_hand_cases() {
        let idx = index_1d(&[0.0, 10.0]);
        assert_eq!(idx.max_similarity(&[4.0]).unwrap(), (-4.0, StateId::new(0, 0)));
        assert_eq!(idx.max_similarity(&[10.0]).unwrap(), (0.0, StateId::new(0, 1)));
    }

    #[test]
    fn ties_resolve_to_smallest_id() {
        let idx = SimilarityIndex::new(
            vec![vec![1.0], vec![-1.0], vec![1.0]],
            vec![StateId::new(5, 0), StateId::new(2, 3), StateId::new(2, 1)],
        )
        .unwrap();
        assert_eq!(idx.max_similarity(&[0.0]).unwrap().1, StateId::new(2, 1));
    }

    #[test]
    fn empty_index_is_a_contract_error() {
        let idx = SimilarityIndex::default();
        assert!(matches!(idx.max_similarity(&[]), Err(SbrError::Contract(_))));
    }

    #[test]
    fn stats_extremes_and_degeneracy() {
        let s = CriterionStats::from_max_similarities(&[-1.0, -3.0, -5.0]).unwrap();
        assert_eq!((s.s_plus, s.s_minus), (-1.0, -5.0));
        assert_eq!(s.normalize(-3.0), 0.5);
        assert_eq!(s.normalize(-1.0), 1.0);
        assert_eq!(s.normalize(-5.0), 0.0);
        assert!(matches!(CriterionStats::from_max_similarities(&[-2.0]), Err(SbrError::DegenerateStats { .. })));
    }

    #[test]
    fn single_offline_state_is_degenerate() {
        let idx = index_1d(&[0.0, 1.0]);
        assert!(matches!(compute_stats(&idx, &[vec![3.0]]), Err(SbrError::DegenerateStats { .. })));
    }

    #[test]
    fn criterion_matches_hand_normalization() {
        let idx = index_1d(&[0.0]);
        let offline = vec![vec![1.0], vec![3.0], vec![5.0]];
        let stats = compute_stats(&idx, &offline).unwrap();
        assert_eq!(criterion_f(&stats, &idx, &[1.0]).unwrap(), 1.0);
        assert_eq!(criterion_f(&stats, &idx, &[5.0]).unwrap(), 0.0);
        assert_eq!(criterion_f(&stats, &idx, &[3.0]).unwrap(), 0.5);
    }

    proptest! {
        #[test]
        fn similarity_is_a_negated_metric(
            a in proptest::collection::vec(-10.0f64..10.0, 3),
            b in proptest::collection::vec(-10.0f64..10.0, 3),
            c in proptest::collection::vec(-10.0f64..10.0, 3),
        ) {
            let ab = similarity(&a, &b).unwrap();
            prop_assert_eq!(ab, similarity(&b, &a).unwrap());
            prop_assert!(ab <= 0.0);
            prop_assert_eq!(similarity(&a, &a).unwrap(), 0.0);
            let (dab, dbc, dac) = (-ab, -similarity(&b, &c).unwrap(), -similarity(&a, &c).unwrap());
            prop_assert!(dac <= dab + dbc + 1e-12);
        }

        #[test]
        fn search_matches_double_loop(
            experts in proptest::collection::vec(proptest::collection::vec(-5.0f64..5.0, 2), 1..40),
            queries in proptest::collection::vec(proptest::collection::vec(-5.0f64..5.0, 2), 1..10),
        ) {
            let ids: Vec<StateId> = (0..experts.len()).map(|t| StateId::new(1, t)).collect();
            let idx = SimilarityIndex::new(experts.clone(), ids.clone()).unwrap();
            for q in &queries {
                let mut best = f64::NEG_INFINITY;
                let mut arg = ids[0];
                for (e, id) in experts.iter().zip(&ids) {
                    let s = similarity(e, q).unwrap();
                    if s > best { best = s; arg = *id; }
                }
                prop_assert_eq!(idx.max_similarity(q).unwrap(), (best, arg));
            }
        }
    }
}
