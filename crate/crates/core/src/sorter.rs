//! Differentiable ordering via entropic optimal transport.
//!
//! Scores are rescaled to rank targets (highest score toward target 1),
//! squared differences to the targets 1..N form the cost matrix, and
//! Sinkhorn-Knopp iterations between uniform marginals produce a transport
//! plan whose scaled form N*Gamma is a doubly-stochastic soft permutation.
//! The rank estimate gamma = N*Gamma*B is strictly monotone in the rescaled
//! score for every iterate and every epsilon (the kernel rows are
//! likelihood-ratio ordered), so hard ranks extracted from it agree with a
//! plain descending sort whenever float resolution allows; annealing epsilon
//! just widens that margin.
//!
//! Two solver routes exist on purpose and are cross-checked in tests: a
//! value-only solver (scaled form, switching to log-domain potentials below
//! eps = 1e-2 where exp(-C/eps) would underflow), and a graph-recorded
//! solver used in training, whose gradient is the exact derivative of the
//! executed iterations.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

#[cfg(not(feature = "std"))]
use num_traits::Float as _;

use crate::graph::{EngineError, Graph, NodeId};
use crate::tensor::Tensor2;

/// Threshold below which the value solver works with log-domain potentials.
const LOG_DOMAIN_EPS: f64 = 1e-2;

/// Solver settings.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SinkhornConfig {
    /// Entropy regularization strength.
    pub epsilon: f64,
    /// Iteration cap per solve (one iteration = one row/column rescale pair).
    pub max_iters: usize,
    /// Convergence threshold on the max marginal violation.
    pub tol: f64,
    /// Final epsilon of the annealed hard-extraction schedule; `None`
    /// extracts at `epsilon` directly.
    pub anneal_eps: Option<f64>,
}

impl Default for SinkhornConfig {
    fn default() -> Self {
        Self { epsilon: 0.1, max_iters: 200, tol: 1e-6, anneal_eps: Some(1e-3) }
    }
}

impl SinkhornConfig {
    pub fn validate(&self) -> Result<(), SorterError> {
        if !(self.epsilon > 0.0) || !self.epsilon.is_finite() {
            return Err(SorterError::BadConfig("epsilon must be positive and finite"));
        }
        if !(self.tol > 0.0) {
            return Err(SorterError::BadConfig("tol must be positive"));
        }
        if self.max_iters == 0 {
            return Err(SorterError::BadConfig("max_iters must be at least 1"));
        }
        if let Some(a) = self.anneal_eps {
            if !(a > 0.0) || !a.is_finite() {
                return Err(SorterError::BadConfig("anneal_eps must be positive and finite"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SorterError {
    /// Scores contain NaN or infinity.
    NonFiniteScores,
    /// Cost matrix must be square, finite and nonnegative.
    BadCost(&'static str),
    /// Empty input.
    Empty,
    /// Plan and cloud disagree on the point count.
    SizeMismatch { plan: usize, cloud: usize },
    BadConfig(&'static str),
    Engine(EngineError),
}

impl fmt::Display for SorterError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SorterError::NonFiniteScores => write!(f, "scores must be finite"),
            SorterError::BadCost(m) => write!(f, "cost matrix: {m}"),
            SorterError::Empty => write!(f, "empty input"),
            SorterError::SizeMismatch { plan, cloud } => {
                write!(f, "plan is {plan}x{plan} but cloud has {cloud} points")
            }
            SorterError::BadConfig(m) => write!(f, "sinkhorn config: {m}"),
            SorterError::Engine(e) => write!(f, "{e}"),
        }
    }
}

impl core::error::Error for SorterError {}

impl From<EngineError> for SorterError {
    fn from(e: EngineError) -> Self {
        SorterError::Engine(e)
    }
}

/// Transport plan between uniform marginals, with solve diagnostics.
/// `gamma` rows and columns each sum to 1/N within `marginal_violation`.
#[derive(Debug, Clone)]
pub struct Plan {
    pub gamma: Tensor2,
    pub iterations: usize,
    pub marginal_violation: f64,
    /// False means the iteration cap was hit first; the plan is still the
    /// best iterate and `marginal_violation` reports how far off it is.
    pub converged: bool,
}

/// Real-valued rank estimates and the discrete ranks extracted from them.
/// `hard_ranks[i]` is the 1-based rank of point `i`; rank 1 is the highest
/// score.
#[derive(Debug, Clone, PartialEq)]
pub struct Ordering {
    pub gamma: Vec<f64>,
    pub hard_ranks: Vec<usize>,
}

impl Ordering {
    /// Point indices sorted by rank (element 0 is the rank-1 point).
    pub fn by_rank(&self) -> Vec<usize> {
        let n = self.hard_ranks.len();
        let mut out = vec![0usize; n];
        for (i, &r) in self.hard_ranks.iter().enumerate() {
            out[r - 1] = i;
        }
        out
    }

    /// The first `n` point indices in rank order.
    pub fn top(&self, n: usize) -> Vec<usize> {
        let mut v = self.by_rank();
        v.truncate(n);
        v
    }

    /// True when `hard_ranks` is a permutation of 1..=N.
    pub fn is_valid_permutation(&self) -> bool {
        let n = self.hard_ranks.len();
        let mut seen = vec![false; n];
        for &r in &self.hard_ranks {
            if r == 0 || r > n || seen[r - 1] {
                return false;
            }
            seen[r - 1] = true;
        }
        true
    }
}

/// Rescale scores to rank targets in [1, N]: the highest score maps to 1,
/// the lowest to N. Equal scores all map to (N+1)/2.
pub fn rank_targets(s: &[f64]) -> Vec<f64> {
    let n = s.len();
    let max = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = s.iter().cloned().fold(f64::INFINITY, f64::min);
    let range = max - min;
    if range < 1e-12 {
        return vec![(n as f64 + 1.0) / 2.0; n];
    }
    s.iter()
        .map(|&v| 1.0 + (n as f64 - 1.0) * (max - v) / range)
        .collect()
}

/// Cost matrix C_ij = (target_i - j)^2 over targets j = 1..N, normalized by
/// its largest entry (skipped for N = 1 where the single entry is 0).
pub fn build_cost(s: &[f64]) -> Result<Tensor2, SorterError> {
    if s.is_empty() {
        return Err(SorterError::Empty);
    }
    if s.iter().any(|v| !v.is_finite()) {
        return Err(SorterError::NonFiniteScores);
    }
    let n = s.len();
    let targets = rank_targets(s);
    let mut c = Tensor2::from_fn(n, n, |i, j| {
        let d = targets[i] - (j as f64 + 1.0);
        d * d
    });
    if n > 1 {
        let (max, _, _) = c.max_entry();
        if max > 0.0 {
            for v in c.data_mut() {
                *v /= max;
            }
        }
    }
    Ok(c)
}

/// Graph twin of [`build_cost`]: same rule, recorded for differentiation.
/// `s` is an Nx1 node. Gradients flow through the rescaling (including its
/// max/min picks) and the max-entry normalization.
pub fn build_cost_node(g: &mut Graph, s: NodeId) -> Result<NodeId, SorterError> {
    let (n, cols) = g.value(s).shape();
    if cols != 1 || n == 0 {
        return Err(SorterError::BadCost("scores must be a non-empty column"));
    }
    if !g.value(s).is_finite() {
        return Err(SorterError::NonFiniteScores);
    }
    if n == 1 {
        return Ok(g.constant(Tensor2::zeros(1, 1)));
    }

    let max_v = g.value(s).max_entry().0;
    let min_v = -g.value(s).map(|v| -v).max_entry().0;
    let targets = if max_v - min_v < 1e-12 {
        // locally constant map, no gradient
        g.constant(Tensor2::filled(n, 1, (n as f64 + 1.0) / 2.0))
    } else {
        let mx = g.max_all(s)?;
        let neg = g.scale(s, -1.0)?;
        let neg_min = g.max_all(neg)?;
        let mn = g.scale(neg_min, -1.0)?;
        let range = g.sub(mx, mn)?;
        let one = g.constant(Tensor2::scalar(1.0));
        let inv_range = g.div(one, range)?;
        let ones_n = g.constant(Tensor2::ones(n, 1));
        let mx_col = g.matmul(ones_n, mx)?;
        let gap = g.sub(mx_col, s)?;
        let scaled = g.mul_scalar(gap, inv_range)?;
        let spread = g.scale(scaled, n as f64 - 1.0)?;
        g.add_scalar(spread, 1.0)?
    };

    let ones_row = g.constant(Tensor2::ones(1, n));
    let t_cols = g.matmul(targets, ones_row)?;
    let b = g.constant(Tensor2::from_fn(n, n, |_, j| j as f64 + 1.0));
    let diff = g.sub(t_cols, b)?;
    let raw = g.mul(diff, diff)?;

    let max_c = g.max_all(raw)?;
    let one = g.constant(Tensor2::scalar(1.0));
    let inv_max = g.div(one, max_c)?;
    Ok(g.mul_scalar(raw, inv_max)?)
}

fn check_cost(c: &Tensor2) -> Result<usize, SorterError> {
    let (n, m) = c.shape();
    if n == 0 {
        return Err(SorterError::Empty);
    }
    if n != m {
        return Err(SorterError::BadCost("must be square"));
    }
    if !c.is_finite() {
        return Err(SorterError::BadCost("entries must be finite"));
    }
    if c.data().iter().any(|&v| v < 0.0) {
        return Err(SorterError::BadCost("entries must be nonnegative"));
    }
    Ok(n)
}

/// Solve for the entropic transport plan between uniform marginals.
///
/// Uses plain scalings for eps >= 1e-2 and log-domain potentials below,
/// where exp(-C/eps) underflows. Hitting the iteration cap is not an error:
/// the returned plan carries `converged = false` and the achieved violation.
pub fn sinkhorn(c: &Tensor2, cfg: &SinkhornConfig) -> Result<Plan, SorterError> {
    cfg.validate()?;
    let n = check_cost(c)?;
    if n == 1 {
        return Ok(Plan {
            gamma: Tensor2::ones(1, 1),
            iterations: 0,
            marginal_violation: 0.0,
            converged: true,
        });
    }
    if cfg.epsilon >= LOG_DOMAIN_EPS {
        Ok(sinkhorn_scaled(c, cfg.epsilon, cfg.max_iters, cfg.tol))
    } else {
        let mut alpha = vec![0.0; n];
        let mut beta = vec![0.0; n];
        Ok(sinkhorn_log(c, cfg.epsilon, cfg.max_iters, cfg.tol, &mut alpha, &mut beta))
    }
}

fn sinkhorn_scaled(c: &Tensor2, eps: f64, max_iters: usize, tol: f64) -> Plan {
    let n = c.rows();
    let marginal = 1.0 / n as f64;
    let k = c.map(|v| (-v / eps).exp());
    let kt = k.transpose();

    let mut v = vec![1.0; n];
    let mut u = vec![0.0; n];
    let mut t = vec![0.0; n];
    let mut r = vec![0.0; n];
    let mut iterations = 0;
    let (violation, converged) = loop {
        matvec(&k, &v, &mut r);
        for i in 0..n {
            u[i] = marginal / r[i];
        }
        matvec(&kt, &u, &mut t);
        let violation = (0..n)
            .map(|j| (v[j] * t[j] - marginal).abs())
            .fold(0.0, f64::max);
        iterations += 1;
        if violation < tol {
            break (violation, true);
        }
        if iterations >= max_iters {
            break (violation, false);
        }
        for j in 0..n {
            v[j] = marginal / t[j];
        }
    };

    let gamma = Tensor2::from_fn(n, n, |i, j| u[i] * k.get(i, j) * v[j]);
    Plan { gamma, iterations, marginal_violation: violation, converged }
}

fn matvec(m: &Tensor2, x: &[f64], out: &mut [f64]) {
    let (rows, cols) = m.shape();
    for i in 0..rows {
        let row = m.row(i);
        let mut acc = 0.0;
        for k in 0..cols {
            acc += row[k] * x[k];
        }
        out[i] = acc;
    }
}

/// Log-domain pass; potentials are warm-started from and left in
/// `alpha`/`beta` so an annealing schedule can chain stages.
fn sinkhorn_log(
    c: &Tensor2,
    eps: f64,
    max_iters: usize,
    tol: f64,
    alpha: &mut [f64],
    beta: &mut [f64],
) -> Plan {
    let n = c.rows();
    let marginal = 1.0 / n as f64;
    let log_marginal = marginal.ln();

    let mut iterations = 0;
    let (violation, converged) = loop {
        // row rescale: alpha_i = eps(log mu_i - LSE_j((beta_j - C_ij)/eps))
        for i in 0..n {
            let row = c.row(i);
            let mut m = f64::NEG_INFINITY;
            for j in 0..n {
                m = m.max((beta[j] - row[j]) / eps);
            }
            let mut acc = 0.0;
            for j in 0..n {
                acc += ((beta[j] - row[j]) / eps - m).exp();
            }
            alpha[i] = eps * (log_marginal - (m + acc.ln()));
        }
        // column marginals of the current plan
        let mut violation = 0.0f64;
        for j in 0..n {
            let mut col_sum = 0.0;
            for i in 0..n {
                col_sum += ((alpha[i] + beta[j] - c.get(i, j)) / eps).exp();
            }
            violation = violation.max((col_sum - marginal).abs());
        }
        iterations += 1;
        if violation < tol {
            break (violation, true);
        }
        if iterations >= max_iters {
            break (violation, false);
        }
        for j in 0..n {
            let mut m = f64::NEG_INFINITY;
            for i in 0..n {
                m = m.max((alpha[i] - c.get(i, j)) / eps);
            }
            let mut acc = 0.0;
            for i in 0..n {
                acc += ((alpha[i] - c.get(i, j)) / eps - m).exp();
            }
            beta[j] = eps * (log_marginal - (m + acc.ln()));
        }
    };

    let gamma = Tensor2::from_fn(n, n, |i, j| ((alpha[i] + beta[j] - c.get(i, j)) / eps).exp());
    Plan { gamma, iterations, marginal_violation: violation, converged }
}

/// Solve statistics of a graph-recorded Sinkhorn pass.
#[derive(Debug, Clone, Copy)]
pub struct SinkhornStats {
    pub iterations: usize,
    pub marginal_violation: f64,
    pub converged: bool,
}

/// Graph-recorded Sinkhorn iterations on a cost node. The backward pass
/// differentiates exactly the iterations that were executed. Set `tol` to 0
/// to force a fixed iteration count (useful when comparing against finite
/// differences, where the step count must not change under perturbation).
pub fn sinkhorn_node(
    g: &mut Graph,
    c: NodeId,
    cfg: &SinkhornConfig,
) -> Result<(NodeId, SinkhornStats), SorterError> {
    if !(cfg.epsilon > 0.0) || !cfg.epsilon.is_finite() {
        return Err(SorterError::BadConfig("epsilon must be positive and finite"));
    }
    if cfg.max_iters == 0 {
        return Err(SorterError::BadConfig("max_iters must be at least 1"));
    }
    let n = check_cost(g.value(c))?;
    if n == 1 {
        let gamma = g.constant(Tensor2::ones(1, 1));
        return Ok((gamma, SinkhornStats { iterations: 0, marginal_violation: 0.0, converged: true }));
    }
    let marginal = 1.0 / n as f64;

    let neg = g.scale(c, -1.0 / cfg.epsilon)?;
    let k = g.exp(neg)?;
    let kt = g.transpose(k)?;
    let mu = g.constant(Tensor2::filled(n, 1, marginal));
    let nu = g.constant(Tensor2::filled(n, 1, marginal));

    let mut v = g.constant(Tensor2::ones(n, 1));
    let mut u;
    let mut iterations = 0;
    let (violation, converged) = loop {
        let r = g.matmul(k, v)?;
        u = g.div(mu, r)?;
        let t = g.matmul(kt, u)?;
        let violation = g
            .value(t)
            .data()
            .iter()
            .zip(g.value(v).data())
            .map(|(&tj, &vj)| (vj * tj - marginal).abs())
            .fold(0.0, f64::max);
        iterations += 1;
        if cfg.tol > 0.0 && violation < cfg.tol {
            break (violation, true);
        }
        if iterations >= cfg.max_iters {
            break (violation, violation < cfg.tol);
        }
        v = g.div(nu, t)?;
    };

    // gamma = diag(u) K diag(v)
    let ones_row = g.constant(Tensor2::ones(1, n));
    let u_cols = g.matmul(u, ones_row)?;
    let uk = g.mul(u_cols, k)?;
    let vt = g.transpose(v)?;
    let ones_col = g.constant(Tensor2::ones(n, 1));
    let v_rows = g.matmul(ones_col, vt)?;
    let gamma = g.mul(uk, v_rows)?;

    Ok((gamma, SinkhornStats { iterations, marginal_violation: violation, converged }))
}

/// Rank estimates gamma = N * Gamma * B with B = [1..N]^T, and hard ranks
/// from sorting gamma ascending (ties broken by point index).
pub fn ordering_from_plan(gamma: &Tensor2) -> Ordering {
    let n = gamma.rows();
    let scale = n as f64;
    let ranks_real: Vec<f64> = (0..n)
        .map(|i| {
            let row = gamma.row(i);
            let mut acc = 0.0;
            for (j, &v) in row.iter().enumerate() {
                acc += v * (j as f64 + 1.0);
            }
            scale * acc
        })
        .collect();

    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| {
        ranks_real[a]
            .partial_cmp(&ranks_real[b])
            .expect("rank estimates are finite")
            .then(a.cmp(&b))
    });
    let mut hard = vec![0usize; n];
    for (pos, &i) in idx.iter().enumerate() {
        hard[i] = pos + 1;
    }
    Ordering { gamma: ranks_real, hard_ranks: hard }
}

/// Exact descending sort of the scores; rank 1 is the highest score, ties
/// broken by the lower point index. Reference for the eps -> 0 limit.
pub fn hard_sort_oracle(s: &[f64]) -> Ordering {
    let n = s.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| {
        s[b].partial_cmp(&s[a]).expect("scores are finite").then(a.cmp(&b))
    });
    let mut hard = vec![0usize; n];
    for (pos, &i) in idx.iter().enumerate() {
        hard[i] = pos + 1;
    }
    Ordering { gamma: idx.iter().map(|&i| s[i]).collect(), hard_ranks: hard }
}

/// Hard ordering extraction: solve the transport problem on an annealing
/// schedule that halves epsilon from `cfg.epsilon` down to `cfg.anneal_eps`,
/// warm-starting the potentials at each stage, then read ranks off the
/// final plan.
pub fn hard_ordering(s: &[f64], cfg: &SinkhornConfig) -> Result<Ordering, SorterError> {
    cfg.validate()?;
    if s.is_empty() {
        return Err(SorterError::Empty);
    }
    if s.len() == 1 {
        return Ok(Ordering { gamma: vec![1.0], hard_ranks: vec![1] });
    }
    let c = build_cost(s)?;
    let target = cfg.anneal_eps.unwrap_or(cfg.epsilon).min(cfg.epsilon);

    let mut stages = vec![cfg.epsilon];
    let mut e = cfg.epsilon;
    while e > target {
        e = (e / 2.0).max(target);
        stages.push(e);
    }

    let n = s.len();
    let mut alpha = vec![0.0; n];
    let mut beta = vec![0.0; n];
    let mut plan = None;
    for &eps in &stages {
        plan = Some(sinkhorn_log(&c, eps, cfg.max_iters, cfg.tol, &mut alpha, &mut beta));
    }
    Ok(ordering_from_plan(&plan.expect("at least one stage").gamma))
}

/// Soft permutation of the cloud: P_hat = (N * Gamma)^T * P. Row r is the
/// convex combination of points assigned to rank r.
pub fn soft_permute(points: &Tensor2, gamma: &Tensor2) -> Result<Tensor2, SorterError> {
    let n = check_cost_shape_only(gamma)?;
    if points.rows() != n {
        return Err(SorterError::SizeMismatch { plan: n, cloud: points.rows() });
    }
    let weights = gamma.transpose().map(|v| v * n as f64);
    Ok(weights.matmul(points))
}

fn check_cost_shape_only(gamma: &Tensor2) -> Result<usize, SorterError> {
    let (n, m) = gamma.shape();
    if n == 0 {
        return Err(SorterError::Empty);
    }
    if n != m {
        return Err(SorterError::BadCost("plan must be square"));
    }
    Ok(n)
}

/// Graph twin of [`soft_permute`].
pub fn soft_permute_node(
    g: &mut Graph,
    points: NodeId,
    gamma: NodeId,
) -> Result<NodeId, SorterError> {
    let n = check_cost_shape_only(g.value(gamma))?;
    if g.value(points).rows() != n {
        return Err(SorterError::SizeMismatch { plan: n, cloud: g.value(points).rows() });
    }
    let scaled = g.scale(gamma, n as f64)?;
    let weights = g.transpose(scaled)?;
    Ok(g.matmul(weights, points)?)
}

/// Entropy -sum p ln p of a plan (0 ln 0 = 0). Larger epsilon gives larger
/// entropy for a fixed cost.
pub fn plan_entropy(gamma: &Tensor2) -> f64 {
    gamma
        .data()
        .iter()
        .map(|&p| if p > 0.0 { -p * p.ln() } else { 0.0 })
        .sum()
}
