//! Entropy-regularized optimal transport between two discrete marginals,
//! solved by Sinkhorn scaling, and conversion of a plan into cell edits.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{FpError, Result};

/// Kernel entries below this value are raised to it so no row of the
/// kernel vanishes at large `lambda`.
pub const KERNEL_FLOOR: f64 = 1e-300;

/// Scale applied to code distances in [`CostMatrix::abs_diff`], so a move
/// between neighbouring codes costs one hundredth of a unit.
pub const DEFAULT_COST_SCALE: f64 = 0.01;

/// Square cost matrix `Theta`, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostMatrix {
    k: usize,
    values: Vec<f64>,
}

impl CostMatrix {
    pub fn new(k: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != k * k {
            return Err(FpError::ShapeError(format!("{} costs for a {k}x{k} matrix", values.len())));
        }
        for a in 0..k {
            for b in 0..k {
                let v = values[a * k + b];
                let ok = if a == b { v >= 0.0 } else { v > 0.0 };
                if !ok || !v.is_finite() {
                    return Err(FpError::InvalidParameter(format!("invalid cost {v} at ({a},{b})")));
                }
            }
        }
        Ok(Self { k, values })
    }

    /// `Theta(a, b) = scale * |a - b|`.
    pub fn abs_diff(k: usize, scale: f64) -> Self {
        let values = (0..k * k)
            .map(|i| scale * ((i / k) as f64 - (i % k) as f64).abs())
            .collect();
        Self { k, values }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SinkhornOptions {
    /// Max-norm tolerance on the marginal residuals.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SinkhornOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 1_000_000,
        }
    }
}

/// A transport plan with its marginals and achieved residual.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransportPlan {
    pub k: usize,
    /// Row-major `k x k`.
    pub g: Vec<f64>,
    pub mu: Vec<f64>,
    pub nu: Vec<f64>,
    /// Max-norm residual of the row marginal (columns are exact after the final step).
    pub residual: f64,
    pub iterations: usize,
}

impl TransportPlan {
    pub fn get(&self, a: usize, b: usize) -> f64 {
        self.g[a * self.k + b]
    }

    pub fn row_sums(&self) -> Vec<f64> {
        self.g.chunks(self.k).map(|r| r.iter().sum()).collect()
    }

    pub fn col_sums(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.k];
        for row in self.g.chunks(self.k) {
            for (o, v) in out.iter_mut().zip(row) {
                *o += v;
            }
        }
        out
    }

    /// Mass moved off the diagonal.
    pub fn off_diagonal_mass(&self) -> f64 {
        let diag: f64 = (0..self.k).map(|a| self.get(a, a)).sum();
        self.g.iter().sum::<f64>() - diag
    }
}

fn check_distribution(name: &str, d: &[f64]) -> Result<()> {
    if d.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(FpError::InvalidParameter(format!("{name} has negative or non-finite entries")));
    }
    let total: f64 = d.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(FpError::InvalidParameter(format!("{name} sums to {total}")));
    }
    Ok(())
}

/// L1 row-marginal residual after each Sinkhorn iteration. Unlike the
/// max-norm used for stopping, this one never increases.
pub type ResidualTrace = Vec<f64>;

/// Solves `min <G, Theta> - H(G) / lambda` subject to `G 1 = mu`, `G^T 1 = nu`.
pub fn sinkhorn(mu: &[f64], nu: &[f64], cost: &CostMatrix, lambda: f64, opts: &SinkhornOptions) -> Result<TransportPlan> {
    sinkhorn_traced(mu, nu, cost, lambda, opts, None)
}

/// [`sinkhorn`] that also records a [`ResidualTrace`].
pub fn sinkhorn_traced(
    mu: &[f64],
    nu: &[f64],
    cost: &CostMatrix,
    lambda: f64,
    opts: &SinkhornOptions,
    mut trace: Option<&mut ResidualTrace>,
) -> Result<TransportPlan> {
    let k = cost.k();
    if mu.len() != k || nu.len() != k {
        return Err(FpError::ShapeError(format!(
            "marginals of length {} and {} for a {k}x{k} cost",
            mu.len(),
            nu.len()
        )));
    }
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(FpError::InvalidParameter(format!("lambda must be positive, got {lambda}")));
    }
    check_distribution("source marginal", mu)?;
    check_distribution("target marginal", nu)?;

    let kernel: Vec<f64> = cost
        .values()
        .iter()
        .map(|c| (-lambda * c).exp().max(KERNEL_FLOOR))
        .collect();
    let mut u = vec![1.0; k];
    let mut v = vec![1.0; k];
    let mut residual = f64::INFINITY;
    let mut iterations = 0;
    while iterations < opts.max_iter {
        iterations += 1;
        // Scale the rows to mu, then the columns to nu.
        for a in 0..k {
            let s: f64 = (0..k).map(|b| kernel[a * k + b] * v[b]).sum();
            u[a] = if mu[a] > 0.0 { mu[a] / s } else { 0.0 };
        }
        for b in 0..k {
            let s: f64 = (0..k).map(|a| kernel[a * k + b] * u[a]).sum();
            v[b] = if nu[b] > 0.0 { nu[b] / s } else { 0.0 };
        }
        let gaps: Vec<f64> = (0..k)
            .map(|a| {
                let s: f64 = (0..k).map(|b| u[a] * kernel[a * k + b] * v[b]).sum();
                (s - mu[a]).abs()
            })
            .collect();
        residual = gaps.iter().copied().fold(0.0, f64::max);
        if let Some(t) = trace.as_deref_mut() {
            t.push(gaps.iter().sum());
        }
        if !residual.is_finite() {
            break;
        }
        if residual < opts.tol {
            let g = (0..k * k).map(|i| u[i / k] * kernel[i] * v[i % k]).collect();
            return Ok(TransportPlan {
                k,
                g,
                mu: mu.to_vec(),
                nu: nu.to_vec(),
                residual,
                iterations,
            });
        }
    }
    Err(FpError::NonConverged { iterations, residual })
}

/// `<G, Theta>_F`.
pub fn transport_cost(g: &[f64], cost: &CostMatrix) -> Result<f64> {
    if g.len() != cost.values().len() {
        return Err(FpError::ShapeError(format!(
            "plan has {} entries, cost has {}",
            g.len(),
            cost.values().len()
        )));
    }
    Ok(g.iter().zip(cost.values()).map(|(a, b)| a * b).sum())
}

/// `-sum G log G` with `0 log 0 = 0`.
pub fn plan_entropy(g: &[f64]) -> f64 {
    -g.iter().filter(|&&v| v > 0.0).map(|&v| v * v.ln()).sum::<f64>()
}

/// Rows to rewrite for one attribute.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EditPlan {
    /// `(row, new_value)`, sorted by row.
    pub edits: Vec<(usize, u32)>,
    /// Rows demanded by the plan.
    pub requested: usize,
    /// Demanded rows that could not be supplied.
    pub shortfall: usize,
}

/// Turns the off-diagonal mass of a plan into row edits.
///
/// For each `a != b`, `round(G(a,b) / mu(a) * n_a)` rows currently valued
/// `a` move to `b`, where `n_a` counts all rows valued `a`. Only rows that
/// are not excluded are drawn, uniformly without replacement; demand beyond
/// them is reported as shortfall.
pub fn sample_edit_plan(plan: &TransportPlan, column: &[u32], excluded: &[bool], seed: u64) -> Result<EditPlan> {
    if excluded.len() != column.len() {
        return Err(FpError::ShapeError("exclusion mask and column differ in length".into()));
    }
    let k = plan.k;
    let mut available: Vec<Vec<usize>> = vec![Vec::new(); k];
    let mut totals = vec![0usize; k];
    for (row, (&v, &ex)) in column.iter().zip(excluded).enumerate() {
        if (v as usize) >= k {
            return Err(FpError::ShapeError(format!("value {v} outside plan of size {k}")));
        }
        totals[v as usize] += 1;
        if !ex {
            available[v as usize].push(row);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = EditPlan::default();
    for a in 0..k {
        if plan.mu[a] <= 0.0 {
            continue;
        }
        let pool = &mut available[a];
        let n_a = totals[a];
        pool.shuffle(&mut rng);
        let mut next = 0;
        for b in (0..k).filter(|&b| b != a) {
            let want = (plan.get(a, b) / plan.mu[a] * n_a as f64).round() as usize;
            out.requested += want;
            let take = want.min(pool.len() - next);
            out.shortfall += want - take;
            out.edits.extend(pool[next..next + take].iter().map(|&r| (r, b as u32)));
            next += take;
        }
    }
    out.edits.sort_unstable();
    Ok(out)
}
