//! Per-point importance scores.
//!
//! The exact score counts, for each point, the fraction of feature columns
//! whose global max it attains. The soft score replaces the count with a
//! temperature-sigmoid of the gap to the column max, which is differentiable
//! and recovers the exact score in the small-temperature limit. Two simpler
//! scorers (row max, row sum) exist as ablation baselines.

use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;

use crate::graph::{EngineError, Graph, NodeId};
use crate::tensor::Tensor2;

/// Which scoring rule the pipeline uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScorerMode {
    /// Non-differentiable argmax-count score (the oracle).
    Exact,
    /// Sigmoid relaxation of the count, differentiable.
    Soft,
    /// Row maximum of the feature map.
    Maxpool,
    /// Row sum of the feature map.
    Sum,
}

impl ScorerMode {
    pub fn as_str(self) -> &'static str {
        match self {
            ScorerMode::Exact => "exact",
            ScorerMode::Soft => "soft",
            ScorerMode::Maxpool => "maxpool",
            ScorerMode::Sum => "sum",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "exact" => Some(ScorerMode::Exact),
            "soft" => Some(ScorerMode::Soft),
            "maxpool" => Some(ScorerMode::Maxpool),
            "sum" => Some(ScorerMode::Sum),
            _ => None,
        }
    }
}

/// Scoring rule plus the sigmoid temperature for the soft mode.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScorerConfig {
    pub mode: ScorerMode,
    pub tau: f64,
}

impl Default for ScorerConfig {
    fn default() -> Self {
        Self { mode: ScorerMode::Soft, tau: 0.5 }
    }
}

impl ScorerConfig {
    pub fn validate(&self) -> Result<(), EngineError> {
        if !(self.tau > 0.0) || !self.tau.is_finite() {
            return Err(EngineError::InvalidParam {
                op: "scorer",
                detail: alloc::format!("tau must be positive and finite, got {}", self.tau),
            });
        }
        Ok(())
    }
}

/// Exact score: s_i = |{ j : i is the first argmax of column j }| / D.
///
/// Scores are in [0, 1] and sum to 1.
pub fn score_exact(f: &Tensor2) -> Vec<f64> {
    let (n, d) = f.shape();
    let (_, argmax) = f.col_max();
    let mut counts = vec![0usize; n];
    for &row in &argmax {
        counts[row] += 1;
    }
    counts.iter().map(|&c| c as f64 / d as f64).collect()
}

/// Soft score as a graph node: s_i = (1/D) * sum_j 2 sigma((f_ij - g_j) / tau),
/// with `gmax` the column-max row of `f`. Gradients flow through both the
/// gaps and the pooled maxima. Returns an Nx1 node.
pub fn score_soft_node(
    g: &mut Graph,
    f: NodeId,
    gmax: NodeId,
    tau: f64,
) -> Result<NodeId, EngineError> {
    let (n, d) = g.value(f).shape();
    if g.value(gmax).shape() != (1, d) {
        let (r, c) = g.value(gmax).shape();
        return Err(EngineError::ShapeMismatch {
            op: "score_soft",
            detail: alloc::format!("global feature {r}x{c} for {n}x{d} features"),
        });
    }
    let ones_col = g.constant(Tensor2::ones(n, 1));
    let g_rows = g.matmul(ones_col, gmax)?;
    let gaps = g.sub(f, g_rows)?;
    let sig = g.sigmoid_temp(gaps, tau)?;
    let sig2 = g.scale(sig, 2.0)?;
    let ones_d = g.constant(Tensor2::ones(d, 1));
    let row_sums = g.matmul(sig2, ones_d)?;
    // divide (not multiply by a reciprocal) so a row equal to the global
    // descriptor scores exactly 1.0
    let denom = g.constant(Tensor2::filled(n, 1, d as f64));
    g.div(row_sums, denom)
}

/// Value-only soft score. `gmax` must be the column maxima of `f`.
pub fn score_soft(f: &Tensor2, gmax: &Tensor2, tau: f64) -> Result<Vec<f64>, EngineError> {
    let expected = f.col_max().0;
    if gmax != &expected {
        return Err(EngineError::InvalidParam {
            op: "score_soft",
            detail: "global feature is not the column maxima of the feature map".to_string(),
        });
    }
    let mut g = Graph::new();
    let fid = g.constant(f.clone());
    let gid = g.constant(gmax.clone());
    let s = score_soft_node(&mut g, fid, gid, tau)?;
    Ok(g.value(s).data().to_vec())
}

/// Ablation scorer: row maxima of the feature map, as an Nx1 node.
pub fn score_maxpool_node(g: &mut Graph, f: NodeId) -> Result<NodeId, EngineError> {
    let ft = g.transpose(f)?;
    let pooled = g.maxpool_cols(ft)?;
    g.transpose(pooled)
}

/// Ablation scorer: row sums of the feature map, as an Nx1 node.
pub fn score_sum_node(g: &mut Graph, f: NodeId) -> Result<NodeId, EngineError> {
    let d = g.value(f).cols();
    let ones_d = g.constant(Tensor2::ones(d, 1));
    g.matmul(f, ones_d)
}

/// Value-only ablation scorers.
pub fn score_maxpool(f: &Tensor2) -> Vec<f64> {
    (0..f.rows())
        .map(|i| f.row(i).iter().cloned().fold(f64::NEG_INFINITY, f64::max))
        .collect()
}

pub fn score_sum(f: &Tensor2) -> Vec<f64> {
    (0..f.rows()).map(|i| f.row(i).iter().sum()).collect()
}

/// Build the configured score vector from a feature-map node. The exact
/// mode produces a constant node: it has no usable gradient and exists for
/// inference and oracle comparisons.
pub fn scores_node(g: &mut Graph, f: NodeId, cfg: &ScorerConfig) -> Result<NodeId, EngineError> {
    cfg.validate()?;
    match cfg.mode {
        ScorerMode::Soft => {
            let gmax = g.maxpool_cols(f)?;
            score_soft_node(g, f, gmax, cfg.tau)
        }
        ScorerMode::Exact => {
            let s = score_exact(g.value(f));
            Ok(g.constant(Tensor2::col_vec(s)))
        }
        ScorerMode::Maxpool => score_maxpool_node(g, f),
        ScorerMode::Sum => score_sum_node(g, f),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::check_gradients;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rand_features(n: usize, d: usize, seed: u64) -> Tensor2 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor2::from_fn(n, d, |_, _| rng.gen_range(0.0..1.0))
    }

    /// Random features with each column's argmax boosted by a margin, so the
    /// argmax is unique and sigmoid tails are provably negligible.
    fn features_with_margin(n: usize, d: usize, margin: f64, seed: u64) -> Tensor2 {
        let mut f = rand_features(n, d, seed);
        let (_, argmax) = f.col_max();
        for (j, &i) in argmax.iter().enumerate() {
            let v = f.get(i, j) + margin;
            f.set(i, j, v);
        }
        f
    }

    #[test]
    fn exact_hand_case() {
        let f = Tensor2::from_vec(3, 2, vec![1.0, 0.0, 0.0, 1.0, 0.5, 0.5]).unwrap();
        assert_eq!(score_exact(&f), vec![0.5, 0.5, 0.0]);
    }

    #[test]
    fn exact_single_point_scores_one() {
        let f = Tensor2::from_vec(1, 4, vec![0.1, -3.0, 2.0, 0.0]).unwrap();
        assert_eq!(score_exact(&f), vec![1.0]);
    }

    #[test]
    fn exact_dominating_row_scores_one() {
        let mut f = rand_features(6, 8, 3);
        for j in 0..8 {
            f.set(2, j, 5.0 + j as f64);
        }
        let s = score_exact(&f);
        assert_eq!(s[2], 1.0);
        for (i, &v) in s.iter().enumerate() {
            if i != 2 {
                assert_eq!(v, 0.0);
            }
        }
    }

    #[test]
    fn exact_ties_go_to_lowest_index_and_sum_to_one() {
        let f = Tensor2::from_vec(2, 2, vec![1.0, 1.0, 1.0, 1.0]).unwrap();
        assert_eq!(score_exact(&f), vec![1.0, 0.0]);

        for seed in 0..20 {
            let f = rand_features(13, 17, seed);
            let total: f64 = score_exact(&f).iter().sum();
            assert!((total - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn soft_row_equal_to_global_scores_exactly_one() {
        // row 0 dominates every column, so F_0 = G
        let f =
            Tensor2::from_vec(3, 3, vec![2.0, 3.0, 4.0, 1.0, 0.0, 1.0, 0.5, 2.5, 3.5]).unwrap();
        let gmax = f.col_max().0;
        let s = score_soft(&f, &gmax, 0.5).unwrap();
        assert_eq!(s[0], 1.0);
    }

    #[test]
    fn soft_far_below_global_scores_near_zero() {
        let f = Tensor2::from_vec(2, 2, vec![10.0, 10.0, 0.0, 0.0]).unwrap();
        let gmax = f.col_max().0;
        let s = score_soft(&f, &gmax, 0.1).unwrap();
        assert!(s[1] < 1e-12, "{}", s[1]);
    }

    #[test]
    fn soft_requires_matching_global_feature() {
        let f = rand_features(4, 4, 5);
        let wrong = Tensor2::ones(1, 4);
        assert!(score_soft(&f, &wrong, 0.5).is_err());
    }

    #[test]
    fn soft_matches_exact_in_small_temperature_limit() {
        for seed in 0..20 {
            let f = features_with_margin(32, 64, 0.01, seed);
            let gmax = f.col_max().0;
            let soft = score_soft(&f, &gmax, 1e-4).unwrap();
            let exact = score_exact(&f);
            let max_err = soft
                .iter()
                .zip(&exact)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            assert!(max_err < 1e-3, "seed {seed}: {max_err}");
        }
    }

    #[test]
    fn soft_is_permutation_equivariant() {
        let f = rand_features(9, 6, 11);
        let gmax = f.col_max().0;
        let s = score_soft(&f, &gmax, 0.5).unwrap();

        let perm = [3, 1, 8, 0, 6, 2, 7, 5, 4];
        let fp = Tensor2::from_fn(9, 6, |i, j| f.get(perm[i], j));
        let sp = score_soft(&fp, &fp.col_max().0, 0.5).unwrap();
        for i in 0..9 {
            assert_eq!(sp[i], s[perm[i]]);
        }
    }

    #[test]
    fn soft_gradient_matches_finite_differences() {
        // margin keeps perturbations away from argmax crossovers
        let f = features_with_margin(6, 5, 0.05, 7);
        let report = check_gradients(&[f], 1e-6, |g, ids| {
            let gmax = g.maxpool_cols(ids[0])?;
            let s = score_soft_node(g, ids[0], gmax, 0.5)?;
            let w = g.constant(Tensor2::from_fn(6, 1, |i, _| 0.2 * i as f64 - 0.5));
            let p = g.mul(s, w)?;
            g.sum(p)
        })
        .unwrap();
        assert!(report.max_rel_err < 1e-4, "rel err {}", report.max_rel_err);
    }

    #[test]
    fn proportional_shortcut_gives_same_ranking() {
        for seed in 0..10 {
            let f = rand_features(12, 7, 100 + seed);
            let gmax = f.col_max().0;
            let tau = 0.5;
            let s = score_soft(&f, &gmax, tau).unwrap();
            // plain sigmoid sum without the 2/D factor
            let shortcut: Vec<f64> = (0..12)
                .map(|i| {
                    (0..7)
                        .map(|j| {
                            crate::graph::stable_sigmoid((f.get(i, j) - gmax.get(0, j)) / tau)
                        })
                        .sum()
                })
                .collect();

            let rank = |v: &[f64]| {
                let mut idx: Vec<usize> = (0..v.len()).collect();
                idx.sort_by(|&a, &b| v[b].partial_cmp(&v[a]).unwrap().then(a.cmp(&b)));
                idx
            };
            assert_eq!(rank(&s), rank(&shortcut), "seed {seed}");
        }
    }

    #[test]
    fn maxpool_and_sum_scorers() {
        let f = Tensor2::from_vec(2, 2, vec![1.0, 0.0, 0.0, 2.0]).unwrap();
        assert_eq!(score_maxpool(&f), vec![1.0, 2.0]);
        assert_eq!(score_sum(&f), vec![1.0, 2.0]);

        let constant = Tensor2::filled(4, 3, 0.7);
        assert!(score_maxpool(&constant).iter().all(|&v| v == 0.7));

        let single_col = Tensor2::from_vec(3, 1, vec![0.3, -1.0, 2.0]).unwrap();
        assert_eq!(score_maxpool(&single_col), vec![0.3, -1.0, 2.0]);

        let zero = Tensor2::zeros(3, 4);
        assert!(score_sum(&zero).iter().all(|&v| v == 0.0));

        let f2 = rand_features(5, 4, 9);
        let neg = f2.map(|v| -v);
        let lin: Vec<f64> = score_sum(&f2)
            .iter()
            .zip(score_sum(&neg))
            .map(|(a, b)| a + b)
            .collect();
        assert!(lin.iter().all(|&v| v.abs() < 1e-12));
    }

    #[test]
    fn node_scorers_match_value_scorers() {
        let f = rand_features(8, 5, 13);
        let mut g = Graph::new();
        let fid = g.constant(f.clone());

        let m = score_maxpool_node(&mut g, fid).unwrap();
        assert_eq!(g.value(m).data(), score_maxpool(&f).as_slice());

        let s = score_sum_node(&mut g, fid).unwrap();
        for (a, b) in g.value(s).data().iter().zip(score_sum(&f)) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn dispatcher_validates_tau() {
        let mut g = Graph::new();
        let f = g.constant(rand_features(3, 3, 1));
        let bad = ScorerConfig { mode: ScorerMode::Soft, tau: -0.5 };
        assert!(scores_node(&mut g, f, &bad).is_err());
    }
}
