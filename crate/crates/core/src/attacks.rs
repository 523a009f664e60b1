//! Attacks a malicious recipient can run on a fingerprinted copy before
//! leaking it: random LSB flips, the column-wise attack driven by pairwise
//! joint distributions, the row-wise attack driven by record similarities,
//! and their composition (row first, then column).

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::correlations::{joint_counts, pairs, stat_relations, CommunityAssignment, JointDistributionSet, StatRelationSet};
use crate::error::{FpError, Result};
use crate::relation::{flip_lsb, Relation};

/// `diff >= tau`, with a relative slack so that a gap of exactly one record
/// (`1/M`) reaches a threshold written as the same decimal.
#[inline]
pub fn reaches(diff: f64, tau: f64) -> bool {
    diff >= tau * (1.0 - 1e-9)
}

/// What an attack changed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackReport {
    /// Cells whose final value differs from the input, row-major order.
    pub changed_positions: Vec<(usize, usize)>,
    pub per_chg: f64,
    pub rounds_executed: usize,
}

impl AttackReport {
    pub fn between(before: &Relation, after: &Relation, rounds_executed: usize) -> Result<Self> {
        let changed_positions = before.diff_positions(after)?;
        let cells = before.n_cells();
        let per_chg = if cells == 0 {
            0.0
        } else {
            changed_positions.len() as f64 / cells as f64
        };
        Ok(Self {
            changed_positions,
            per_chg,
            rounds_executed,
        })
    }
}

/// Flips the LSB in place; cells of single-code attributes are left alone.
fn flip_in_place(relation: &mut Relation, row: usize, attr: usize) -> bool {
    match flip_lsb(relation.get(row, attr), relation.cardinality(attr)) {
        Ok(v) => {
            relation.set_unchecked(row, attr, v);
            true
        }
        Err(_) => false,
    }
}

/// Flips the LSB of `floor(fraction * M * |F|)` distinct cells chosen uniformly.
pub fn atk_rnd(relation: &Relation, fraction: f64, seed: u64) -> Result<(Relation, AttackReport)> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(FpError::InvalidParameter(format!("fraction {fraction} outside [0, 1]")));
    }
    let total = relation.n_cells();
    let count = ((fraction * total as f64).floor() as usize).min(total);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = sample(&mut rng, total, count).into_vec();
    chosen.sort_unstable();
    let n = relation.n_attrs();
    let mut out = relation.clone();
    for idx in chosen {
        flip_in_place(&mut out, idx / n, idx % n);
    }
    let report = AttackReport::between(relation, &out, 1)?;
    Ok((out, report))
}

/// Summary of one column-attack round.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoundSummary {
    pub round: usize,
    /// Joint cells `(p, q, a, b)` whose gap reached the threshold.
    pub triggered_cells: usize,
    /// Rows with at least one suspicious position.
    pub suspicious_rows: usize,
    /// Positions of `H` not flipped in an earlier round.
    pub new_flips: usize,
}

/// Column-wise attack driven round by round, so callers can inspect the
/// relation after each round.
pub struct ColumnAttack<'a> {
    prior: &'a JointDistributionSet,
    tau: f64,
    relation: Relation,
    flipped: Vec<bool>,
    rng: ChaCha8Rng,
    rounds: usize,
    done: bool,
}

impl<'a> ColumnAttack<'a> {
    pub fn new(relation: &Relation, prior: &'a JointDistributionSet, tau: f64, seed: u64) -> Result<Self> {
        if !(tau > 0.0) {
            return Err(FpError::InvalidParameter("tau_col_atk must be > 0".into()));
        }
        if prior.cardinalities() != relation.cardinalities().as_slice() {
            return Err(FpError::ShapeError("prior joint set does not match relation schema".into()));
        }
        Ok(Self {
            prior,
            tau,
            relation: relation.clone(),
            flipped: vec![false; relation.n_cells()],
            rng: ChaCha8Rng::seed_from_u64(seed),
            rounds: 0,
            done: false,
        })
    }

    pub fn relation(&self) -> &Relation {
        &self.relation
    }

    pub fn into_relation(self) -> Relation {
        self.relation
    }

    pub fn rounds_executed(&self) -> usize {
        self.rounds
    }

    /// True once a round found nothing new to flip.
    pub fn converged(&self) -> bool {
        self.done
    }

    /// Runs one round; returns `None` without doing anything once converged.
    pub fn step(&mut self) -> Option<RoundSummary> {
        if self.done {
            return None;
        }
        let rel = &self.relation;
        let n = rel.n_attrs();
        let m = rel.n_rows();
        let card = rel.cardinalities();
        let mf = m.max(1) as f64;

        // Cells of the current empirical joints that drifted from the prior.
        let counts = joint_counts(rel);
        let mut triggered_cells = 0;
        let triggered: Vec<Vec<bool>> = pairs(n)
            .zip(&counts)
            .map(|((p, q), c)| {
                let prior = self.prior.matrix(p, q);
                c.iter()
                    .zip(prior)
                    .map(|(&cnt, &j)| {
                        let hit = reaches((j - f64::from(cnt) / mf).abs(), self.tau);
                        triggered_cells += usize::from(hit);
                        hit
                    })
                    .collect()
            })
            .collect();

        // For each row, how often each attribute sits in a triggered cell.
        let mut highly = Vec::new();
        let mut suspicious_rows = 0;
        let mut tally = vec![0u32; n];
        for i in 0..m {
            tally.iter_mut().for_each(|t| *t = 0);
            let row = rel.row(i);
            let mut idx = 0;
            for p in 0..n {
                for q in p + 1..n {
                    if triggered[idx][(row[p] * card[q] + row[q]) as usize] {
                        tally[p] += 1;
                        tally[q] += 1;
                    }
                    idx += 1;
                }
            }
            let best = *tally.iter().max().unwrap_or(&0);
            if best == 0 {
                continue;
            }
            suspicious_rows += 1;
            let ties: Vec<usize> = (0..n).filter(|&p| tally[p] == best).collect();
            let mode = if ties.len() == 1 {
                ties[0]
            } else {
                ties[self.rng.gen_range(0..ties.len())]
            };
            highly.push((i, mode));
        }

        let mut new_flips = 0;
        for (i, p) in highly {
            let cell = i * n + p;
            if !self.flipped[cell] {
                self.flipped[cell] = true;
                flip_in_place(&mut self.relation, i, p);
                new_flips += 1;
            }
        }
        self.rounds += 1;
        if new_flips == 0 {
            self.done = true;
        }
        Some(RoundSummary {
            round: self.rounds,
            triggered_cells,
            suspicious_rows,
            new_flips,
        })
    }
}

/// Up to `rounds` rounds of the column-wise attack, stopping early once a
/// round has nothing new to flip.
pub fn atk_col(
    relation: &Relation,
    prior: &JointDistributionSet,
    tau_col_atk: f64,
    rounds: usize,
    seed: u64,
) -> Result<(Relation, AttackReport)> {
    if rounds == 0 {
        return Err(FpError::InvalidParameter("at least one attack round required".into()));
    }
    let mut attack = ColumnAttack::new(relation, prior, tau_col_atk, seed)?;
    for _ in 0..rounds {
        if attack.step().is_none() {
            break;
        }
    }
    let executed = attack.rounds_executed();
    let out = attack.into_relation();
    let report = AttackReport::between(relation, &out, executed)?;
    Ok((out, report))
}

/// Rows whose similarity profile drifted from the prior by at least `tau`.
pub fn row_attack_targets(
    relation: &Relation,
    prior: &StatRelationSet,
    comm: &CommunityAssignment,
    tau_row_atk: f64,
) -> Result<Vec<usize>> {
    if !(tau_row_atk > 0.0) {
        return Err(FpError::InvalidParameter("tau_row_atk must be > 0".into()));
    }
    let current = stat_relations(relation, comm)?;
    let gaps = prior.discrepancies(&current)?;
    let mut flagged = Vec::new();
    for (c, g) in current.communities.iter().zip(gaps) {
        for (local, d) in g.into_iter().enumerate() {
            if reaches(d, tau_row_atk) {
                flagged.push(c.members[local]);
            }
        }
    }
    flagged.sort_unstable();
    Ok(flagged)
}

/// Flips every attribute's LSB in each record whose similarity profile drifted.
pub fn atk_row(
    relation: &Relation,
    prior: &StatRelationSet,
    comm: &CommunityAssignment,
    tau_row_atk: f64,
) -> Result<(Relation, AttackReport)> {
    let flagged = row_attack_targets(relation, prior, comm, tau_row_atk)?;
    let mut out = relation.clone();
    for i in flagged {
        for p in 0..relation.n_attrs() {
            flip_in_place(&mut out, i, p);
        }
    }
    let report = AttackReport::between(relation, &out, 1)?;
    Ok((out, report))
}

/// Row-wise attack followed by the column-wise attack.
#[allow(clippy::too_many_arguments)]
pub fn atk_integrated(
    relation: &Relation,
    s_prior: &StatRelationSet,
    comm: &CommunityAssignment,
    j_prior: &JointDistributionSet,
    tau_row_atk: f64,
    tau_col_atk: f64,
    rounds: usize,
    seed: u64,
) -> Result<(Relation, AttackReport)> {
    let (after_row, _) = atk_row(relation, s_prior, comm, tau_row_atk)?;
    let (out, col) = atk_col(&after_row, j_prior, tau_col_atk, rounds, seed)?;
    let report = AttackReport::between(relation, &out, col.rounds_executed)?;
    Ok((out, report))
}
