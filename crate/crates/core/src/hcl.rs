//! Nested subset hierarchy and the multiple-instance NCE loss over it.
//!
//! The ordered cloud is cut into prefixes of exponentially growing size
//! (theta, theta^2, ..., clamped and terminated at N). Each prefix is
//! embedded and contrasted against the full-cloud anchor: the own subset at
//! a level is the positive, the same-level subsets of the other clouds in
//! the batch are the negatives. Because every level term includes the top
//! rows, the top-ranked points participate in more terms, which is what
//! pushes contrastively informative points toward rank 1.

use alloc::vec::Vec;
use core::fmt;

use crate::graph::{EngineError, Graph, NodeId};
use crate::tensor::Tensor2;

/// What counts as a positive for the level-k term.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PositiveSet {
    /// Only the cloud's own level-k subset (default).
    OwnLevel,
    /// Every one of the cloud's own subsets, at any level.
    AllOwnLevels,
}

/// Hierarchy and loss settings.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HclConfig {
    /// Subset growth factor (level k has theta^k points).
    pub theta: usize,
    /// Softmax temperature of the NCE loss.
    pub phi: f64,
    pub positives: PositiveSet,
    /// Cut gradients at the ordering: subsets become hard prefixes of the
    /// discretely permuted cloud. For measuring what the soft path buys.
    pub hard_forward: bool,
}

impl Default for HclConfig {
    fn default() -> Self {
        Self { theta: 2, phi: 0.7, positives: PositiveSet::OwnLevel, hard_forward: false }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum HclError {
    /// theta must be at least 2.
    BadTheta(usize),
    /// The cloud has fewer points than the first subset.
    TooFewPoints { n: usize, theta: usize },
    /// The contrastive loss needs at least two clouds.
    TooFewClouds(usize),
    /// Embedding matrices disagree in shape.
    ShapeMismatch,
    /// No such level.
    BadLevel { level: usize, levels: usize },
    BadPhi(f64),
    Engine(EngineError),
}

impl fmt::Display for HclError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            HclError::BadTheta(t) => write!(f, "theta must be >= 2, got {t}"),
            HclError::TooFewPoints { n, theta } => {
                write!(f, "cloud of {n} points cannot hold a subset of {theta}")
            }
            HclError::TooFewClouds(b) => {
                write!(f, "contrastive batch needs >= 2 clouds, got {b}")
            }
            HclError::ShapeMismatch => write!(f, "embedding shapes disagree"),
            HclError::BadLevel { level, levels } => {
                write!(f, "level {level} out of {levels}")
            }
            HclError::BadPhi(p) => write!(f, "phi must be positive and finite, got {p}"),
            HclError::Engine(e) => write!(f, "{e}"),
        }
    }
}

impl core::error::Error for HclError {}

impl From<EngineError> for HclError {
    fn from(e: EngineError) -> Self {
        HclError::Engine(e)
    }
}

/// Subset sizes theta, theta^2, ..., theta^m <= n, with a final level of
/// size n appended when theta^m < n. Strictly increasing; last size is n.
pub fn hierarchy_sizes(n: usize, theta: usize) -> Result<Vec<usize>, HclError> {
    if theta < 2 {
        return Err(HclError::BadTheta(theta));
    }
    if n < theta {
        return Err(HclError::TooFewPoints { n, theta });
    }
    let mut sizes = Vec::new();
    let mut size = theta;
    loop {
        sizes.push(size);
        match size.checked_mul(theta) {
            Some(next) if next <= n => size = next,
            _ => break,
        }
    }
    if *sizes.last().expect("at least one level") < n {
        sizes.push(n);
    }
    Ok(sizes)
}

/// Nested prefixes of an ordered cloud.
#[derive(Debug, Clone)]
pub struct SubsetHierarchy {
    pub theta: usize,
    pub sizes: Vec<usize>,
    /// `subsets[k]` holds the first `sizes[k]` rows of the ordered cloud.
    pub subsets: Vec<Tensor2>,
}

/// Materialize the prefix subsets of an ordered cloud.
pub fn build_hierarchy(ordered: &Tensor2, theta: usize) -> Result<SubsetHierarchy, HclError> {
    let sizes = hierarchy_sizes(ordered.rows(), theta)?;
    let subsets = sizes.iter().map(|&s| ordered.slice_rows(0, s)).collect();
    Ok(SubsetHierarchy { theta, sizes, subsets })
}

/// How many level terms each rank participates in: rank r appears in every
/// level whose size is >= r. The top theta ranks appear in all of them.
pub fn appearance_counts(sizes: &[usize]) -> Vec<usize> {
    let n = *sizes.last().unwrap_or(&0);
    (1..=n)
        .map(|rank| sizes.iter().filter(|&&s| s >= rank).count())
        .collect()
}

/// Embeddings of a batch, ready for the loss: one anchor row per cloud and
/// one same-shape matrix of subset embeddings per level.
#[derive(Debug, Clone)]
pub struct ContrastBatch {
    /// b x e, one full-cloud embedding per cloud.
    pub anchors: Tensor2,
    /// One b x e matrix per hierarchy level.
    pub levels: Vec<Tensor2>,
    pub phi: f64,
}

impl ContrastBatch {
    fn validate(&self) -> Result<(), HclError> {
        let b = self.anchors.rows();
        if b < 2 {
            return Err(HclError::TooFewClouds(b));
        }
        if !(self.phi > 0.0) || !self.phi.is_finite() {
            return Err(HclError::BadPhi(self.phi));
        }
        if self.levels.is_empty() {
            return Err(HclError::BadLevel { level: 0, levels: 0 });
        }
        for l in &self.levels {
            if l.shape() != self.anchors.shape() {
                return Err(HclError::ShapeMismatch);
            }
        }
        Ok(())
    }
}

/// Level-k NCE term: per cloud, minus the log-probability of its own
/// level-k subset against the same-level subsets of every cloud in the
/// batch, averaged over clouds.
pub fn nce_level_loss(batch: &ContrastBatch, level: usize) -> Result<f64, HclError> {
    batch.validate()?;
    if level >= batch.levels.len() {
        return Err(HclError::BadLevel { level, levels: batch.levels.len() });
    }
    let mut g = Graph::new();
    let anchors = g.constant(batch.anchors.clone());
    let lvl = g.constant(batch.levels[level].clone());
    let loss = nce_level_loss_node(&mut g, anchors, lvl, batch.phi)?;
    Ok(g.value(loss).item())
}

/// Sum of the level terms: the training loss for one batch.
pub fn total_loss(batch: &ContrastBatch) -> Result<f64, HclError> {
    total_loss_with(batch, PositiveSet::OwnLevel)
}

pub fn total_loss_with(batch: &ContrastBatch, positives: PositiveSet) -> Result<f64, HclError> {
    batch.validate()?;
    let mut g = Graph::new();
    let anchors = g.constant(batch.anchors.clone());
    let levels: Vec<NodeId> = batch.levels.iter().map(|l| g.constant(l.clone())).collect();
    let loss = total_loss_node(&mut g, anchors, &levels, batch.phi, positives)?;
    Ok(g.value(loss).item())
}

/// Graph form of the level-k term with singleton positives.
///
/// With S = anchors * level^T and P = S / phi, the per-cloud loss is
/// log(sum_j exp(P_cj)) - P_cc; the node returns the batch mean.
pub fn nce_level_loss_node(
    g: &mut Graph,
    anchors: NodeId,
    level: NodeId,
    phi: f64,
) -> Result<NodeId, EngineError> {
    let b = g.value(anchors).rows();
    let lt = g.transpose(level)?;
    let sims = g.matmul(anchors, lt)?;
    let p = g.scale(sims, 1.0 / phi)?;
    let q = g.exp(p)?;
    let ones = g.constant(Tensor2::ones(b, 1));
    let row_sums = g.matmul(q, ones)?;
    let log_sums = g.log(row_sums)?;
    let denominator = g.sum(log_sums)?;
    let eye = g.constant(Tensor2::identity(b));
    let diag = g.mul(p, eye)?;
    let numerator = g.sum(diag)?;
    let total = g.sub(denominator, numerator)?;
    g.scale(total, 1.0 / b as f64)
}

/// Graph form of the full loss: sum over levels of the level term, with
/// either singleton or all-own-levels positives.
pub fn total_loss_node(
    g: &mut Graph,
    anchors: NodeId,
    levels: &[NodeId],
    phi: f64,
    positives: PositiveSet,
) -> Result<NodeId, EngineError> {
    assert!(!levels.is_empty(), "at least one hierarchy level");
    match positives {
        PositiveSet::OwnLevel => {
            let mut total = nce_level_loss_node(g, anchors, levels[0], phi)?;
            for &level in &levels[1..] {
                let term = nce_level_loss_node(g, anchors, level, phi)?;
                total = g.add(total, term)?;
            }
            Ok(total)
        }
        PositiveSet::AllOwnLevels => {
            let b = g.value(anchors).rows();
            let ones = g.constant(Tensor2::ones(b, 1));
            let eye = g.constant(Tensor2::identity(b));

            // per level: exp(similarities / phi), its diagonal, its row sums
            let mut diags = Vec::with_capacity(levels.len());
            let mut row_sums = Vec::with_capacity(levels.len());
            for &level in levels {
                let lt = g.transpose(level)?;
                let sims = g.matmul(anchors, lt)?;
                let p = g.scale(sims, 1.0 / phi)?;
                let q = g.exp(p)?;
                let qd = g.mul(q, eye)?;
                diags.push(g.matmul(qd, ones)?);
                row_sums.push(g.matmul(q, ones)?);
            }
            // positives are all own levels; the numerator is level-free
            let mut numerator = diags[0];
            for &d in &diags[1..] {
                numerator = g.add(numerator, d)?;
            }
            let log_num = g.log(numerator)?;

            let mut total: Option<NodeId> = None;
            for (k, &rs) in row_sums.iter().enumerate() {
                let negatives = g.sub(rs, diags[k])?;
                let den = g.add(numerator, negatives)?;
                let log_den = g.log(den)?;
                let per_cloud = g.sub(log_den, log_num)?;
                let s = g.sum(per_cloud)?;
                let term = g.scale(s, 1.0 / b as f64)?;
                total = Some(match total {
                    Some(t) => g.add(t, term)?,
                    None => term,
                });
            }
            Ok(total.expect("at least one level"))
        }
    }
}
