//! Owner-side post-processing of a fingerprinted copy.
//!
//! The column defense pulls each drifted attribute marginal back toward the
//! owner's prior by transporting mass between codes. The row defense rewrites
//! a few non-fingerprinted records with maximal similarity drift to their
//! community mode, so that drift-based row attacks waste effort on them.
//! Neither touches a fingerprinted cell.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::correlations::{
    empirical_marginal, hamming, joint_distributions, pairs, stat_relations, CommunityAssignment,
    JointDistributionSet, StatRelationSet,
};
use crate::error::{FpError, Result};
use crate::fingerprint::{insert, FingerprintKey, MarkedPosition};
use crate::relation::Relation;
use crate::transport::{sample_edit_plan, sinkhorn, CostMatrix, SinkhornOptions, DEFAULT_COST_SCALE};

pub const DEFAULT_TAU_COL_DFS: f64 = 1e-4;

/// Transport diagnostics of one attribute treated by the column defense.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeDiagnostics {
    pub attribute: usize,
    pub lambda: f64,
    pub converged: bool,
    pub iterations: usize,
    pub residual: f64,
    pub edits: usize,
    pub shortfall: usize,
    /// The sampled edits were dropped because they pushed the marginal
    /// further from the reference.
    pub reverted: bool,
    /// L1 gap between the empirical marginal and the reference, before and after.
    pub l1_before: f64,
    pub l1_after: f64,
}

/// Selection made by the row defense in one community.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommunityDiagnostics {
    pub community: usize,
    pub selected: Vec<usize>,
    pub objective: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DefenseReport {
    pub changed_positions: Vec<(usize, usize)>,
    pub per_chg: f64,
    pub attributes: Vec<AttributeDiagnostics>,
    pub communities: Vec<CommunityDiagnostics>,
}

impl DefenseReport {
    fn finish(mut self, before: &Relation, after: &Relation) -> Result<Self> {
        self.changed_positions = before.diff_positions(after)?;
        let cells = before.n_cells();
        self.per_chg = if cells == 0 {
            0.0
        } else {
            self.changed_positions.len() as f64 / cells as f64
        };
        Ok(self)
    }
}

/// Settings of the column defense.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnDefenseConfig {
    pub tau_col_dfs: f64,
    /// One regularization weight per attribute.
    pub lambdas: Vec<f64>,
    pub cost_scale: f64,
    pub sinkhorn: SinkhornOptions,
    pub seed: u64,
}

impl ColumnDefenseConfig {
    pub fn uniform(n_attrs: usize, lambda: f64, seed: u64) -> Self {
        Self {
            tau_col_dfs: DEFAULT_TAU_COL_DFS,
            lambdas: vec![lambda; n_attrs],
            cost_scale: DEFAULT_COST_SCALE,
            sinkhorn: SinkhornOptions::default(),
            seed,
        }
    }
}

fn marked_cells(relation: &Relation, marked: &[MarkedPosition]) -> Result<Vec<bool>> {
    let n = relation.n_attrs();
    let mut cells = vec![false; relation.n_cells()];
    for m in marked {
        if m.row_index >= relation.n_rows() || m.attribute_index >= n {
            return Err(FpError::ShapeError(format!(
                "marked position ({}, {}) outside relation",
                m.row_index, m.attribute_index
            )));
        }
        cells[m.row_index * n + m.attribute_index] = true;
    }
    Ok(cells)
}

fn l1(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

/// Attributes whose pair joints drift from the prior by more than `tau` in Frobenius norm.
pub fn drifted_attributes(current: &JointDistributionSet, prior: &JointDistributionSet, tau: f64) -> BTreeSet<usize> {
    let mut out = BTreeSet::new();
    for (p, q) in pairs(current.n_attrs()) {
        if current.frobenius_gap(prior, p, q) > tau {
            out.insert(p);
            out.insert(q);
        }
    }
    out
}

/// Column defense: transports each drifted marginal toward the prior.
pub fn dfs_col(
    relation: &Relation,
    prior: &JointDistributionSet,
    marked: &[MarkedPosition],
    cfg: &ColumnDefenseConfig,
) -> Result<(Relation, DefenseReport)> {
    if !(cfg.tau_col_dfs > 0.0) {
        return Err(FpError::InvalidParameter("tau_col_dfs must be > 0".into()));
    }
    let n = relation.n_attrs();
    if cfg.lambdas.len() != n {
        return Err(FpError::ShapeError(format!("{} lambdas for {n} attributes", cfg.lambdas.len())));
    }
    if prior.cardinalities() != relation.cardinalities().as_slice() {
        return Err(FpError::ShapeError("prior joint set does not match relation schema".into()));
    }
    let protected = marked_cells(relation, marked)?;
    let current = joint_distributions(relation);
    let mut out = relation.clone();
    let mut report = DefenseReport::default();
    for p in drifted_attributes(&current, prior, cfg.tau_col_dfs) {
        let lambda = cfg.lambdas[p];
        let mu = empirical_marginal(relation, p);
        let nu = prior.marginal(p)?;
        let cost = CostMatrix::abs_diff(relation.cardinality(p) as usize, cfg.cost_scale);
        let plan = match sinkhorn(&mu, &nu, &cost, lambda, &cfg.sinkhorn) {
            Ok(plan) => plan,
            Err(FpError::NonConverged { iterations, residual }) => {
                report.attributes.push(AttributeDiagnostics {
                    attribute: p,
                    lambda,
                    converged: false,
                    iterations,
                    residual,
                    edits: 0,
                    shortfall: 0,
                    reverted: false,
                    l1_before: l1(&mu, &nu),
                    l1_after: l1(&mu, &nu),
                });
                continue;
            }
            Err(e) => return Err(e),
        };
        let column = relation.column(p);
        let excluded: Vec<bool> = (0..relation.n_rows()).map(|i| protected[i * n + p]).collect();
        let seed = cfg.seed ^ (p as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
        let edits = sample_edit_plan(&plan, &column, &excluded, seed)?;
        for &(row, value) in &edits.edits {
            out.set_unchecked(row, p, value);
        }
        let l1_before = l1(&mu, &nu);
        let mut l1_after = l1(&empirical_marginal(&out, p), &nu);
        // Rounding and protected rows can overshoot on small columns.
        let reverted = l1_after > l1_before;
        if reverted {
            for &(row, _) in &edits.edits {
                out.set_unchecked(row, p, column[row]);
            }
            l1_after = l1_before;
        }
        report.attributes.push(AttributeDiagnostics {
            attribute: p,
            lambda,
            converged: true,
            iterations: plan.iterations,
            residual: plan.residual,
            edits: if reverted { 0 } else { edits.edits.len() },
            shortfall: edits.shortfall,
            reverted,
            l1_before,
            l1_after,
        });
    }
    let report = report.finish(relation, &out)?;
    Ok((out, report))
}

/// Rows holding at least one fingerprinted cell.
pub fn fingerprinted_rows(n_rows: usize, marked: &[MarkedPosition]) -> Vec<bool> {
    let mut rows = vec![false; n_rows];
    for m in marked {
        if m.row_index < n_rows {
            rows[m.row_index] = true;
        }
    }
    rows
}

/// Most frequent code of every attribute over `members`, ties to the smaller code.
pub fn community_mode(relation: &Relation, members: &[usize]) -> Vec<u32> {
    (0..relation.n_attrs())
        .map(|p| {
            let mut counts = vec![0usize; relation.cardinality(p) as usize];
            for &i in members {
                counts[relation.get(i, p) as usize] += 1;
            }
            let mut best = 0;
            for (code, &c) in counts.iter().enumerate() {
                if c > counts[best] {
                    best = code;
                }
            }
            best as u32
        })
        .collect()
}

/// Objective `d(E)` of a selection in one community: the absolute change in
/// `sum_{i in E} sum_{j in comm \ E} |s'_ij - s_ij|` between the copy before
/// (`before`) and after (`after`) rewriting the selected records.
pub fn eval_row_objective(
    selected: &[usize],
    before: &Relation,
    after: &Relation,
    prior: &StatRelationSet,
    comm: &CommunityAssignment,
    fingerprinted: &[bool],
) -> Result<f64> {
    if selected.is_empty() {
        return Ok(0.0);
    }
    before.check_same_shape(after)?;
    let c = comm.membership[selected[0]];
    if selected.iter().any(|&i| comm.membership[i] != c) {
        return Err(FpError::ConstraintViolation("selection spans several communities".into()));
    }
    if selected.iter().any(|&i| fingerprinted[i]) {
        return Err(FpError::ConstraintViolation("selection contains a fingerprinted record".into()));
    }
    let prior_c = prior
        .communities
        .get(c)
        .ok_or_else(|| FpError::ShapeError(format!("prior has no community {c}")))?;
    let local: std::collections::HashMap<usize, usize> =
        prior_c.members.iter().enumerate().map(|(l, &r)| (r, l)).collect();
    let chosen: BTreeSet<usize> = selected.iter().copied().collect();
    let sim = |d: usize| (-(d as f64)).exp();
    let mut total_after = 0.0;
    let mut total_before = 0.0;
    for &i in &chosen {
        let li = *local
            .get(&i)
            .ok_or_else(|| FpError::ShapeError(format!("row {i} missing from prior community")))?;
        for (lj, &j) in prior_c.members.iter().enumerate() {
            if chosen.contains(&j) {
                continue;
            }
            let s_prior = prior_c.get(li, lj);
            total_after += (s_prior - sim(hamming(after.row(i), after.row(j)))).abs();
            total_before += (s_prior - sim(hamming(before.row(i), before.row(j)))).abs();
        }
    }
    Ok((total_after - total_before).abs())
}

/// Row defense: in each community, rewrites the `ceil(n_c * gamma)`
/// non-fingerprinted records with the largest nonzero similarity drift to
/// the community mode.
pub fn dfs_row(
    relation: &Relation,
    prior: &StatRelationSet,
    comm: &CommunityAssignment,
    gamma_ratio: f64,
    marked: &[MarkedPosition],
) -> Result<(Relation, DefenseReport)> {
    if !(gamma_ratio > 0.0 && gamma_ratio <= 1.0) {
        return Err(FpError::InvalidParameter(format!("gamma ratio {gamma_ratio} outside (0, 1]")));
    }
    let current = stat_relations(relation, comm)?;
    let drift = prior.discrepancies(&current)?;
    let fingerprinted = fingerprinted_rows(relation.n_rows(), marked);
    let mut out = relation.clone();
    let mut report = DefenseReport::default();
    for (c, (community, e)) in current.communities.iter().zip(&drift).enumerate() {
        let n_c = community.members.len();
        let budget = (n_c as f64 * gamma_ratio).ceil() as usize;
        let mut candidates: Vec<(usize, f64)> = community
            .members
            .iter()
            .zip(e)
            // A record with no drift offers the attacker nothing to flag.
            .filter(|(&row, &d)| !fingerprinted[row] && d > 0.0)
            .map(|(&row, &d)| (row, d))
            .collect();
        // Quantized so that summation order cannot break exact ties, which go to the lower row.
        let rank = |d: f64| (d * 1e9).round() as i64;
        candidates.sort_by(|a, b| rank(b.1).cmp(&rank(a.1)).then(a.0.cmp(&b.0)));
        let mut selected: Vec<usize> = candidates.iter().take(budget).map(|x| x.0).collect();
        selected.sort_unstable();
        let mode = community_mode(relation, &community.members);
        for &row in &selected {
            for (p, &v) in mode.iter().enumerate() {
                out.set_unchecked(row, p, v);
            }
        }
        let objective = eval_row_objective(&selected, relation, &out, prior, comm, &fingerprinted)?;
        report.communities.push(CommunityDiagnostics {
            community: c,
            selected,
            objective,
        });
    }
    let report = report.finish(relation, &out)?;
    Ok((out, report))
}

/// Output of the full robust pipeline.
#[derive(Debug, Clone)]
pub struct RobustFingerprint {
    pub relation: Relation,
    pub marked: Vec<MarkedPosition>,
    pub skipped: usize,
    pub row_report: DefenseReport,
    pub col_report: DefenseReport,
    /// Changes relative to the plain fingerprinted copy.
    pub report: DefenseReport,
}

/// Fingerprint insertion followed by the row defense, then the column defense.
pub fn robust_fingerprint(
    relation: &Relation,
    key: &FingerprintKey,
    s_prior: &StatRelationSet,
    j_prior: &JointDistributionSet,
    comm: &CommunityAssignment,
    col_cfg: &ColumnDefenseConfig,
) -> Result<RobustFingerprint> {
    let ins = insert(relation, key)?;
    let gamma = 1.0 / key.gamma_inv as f64;
    let (after_row, row_report) = dfs_row(&ins.relation, s_prior, comm, gamma, &ins.marked)?;
    let (after_col, col_report) = dfs_col(&after_row, j_prior, &ins.marked, col_cfg)?;
    let report = DefenseReport {
        attributes: col_report.attributes.clone(),
        communities: row_report.communities.clone(),
        ..DefenseReport::default()
    }
    .finish(&ins.relation, &after_col)?;
    Ok(RobustFingerprint {
        relation: after_col,
        marked: ins.marked,
        skipped: ins.skipped,
        row_report,
        col_report,
        report,
    })
}
