//! Robustness and utility metrics.

use serde::{Deserialize, Serialize};

use crate::correlations::{hamming, joint_distributions, pairs, CommunityAssignment};
use crate::error::{FpError, Result};
use crate::fingerprint::FingerprintCode;
use crate::relation::Relation;

/// Bits on which two codes differ.
pub fn num_cmp(f: &FingerprintCode, extracted: &FingerprintCode) -> Result<usize> {
    if f.len() != extracted.len() {
        return Err(FpError::ShapeError(format!(
            "codes of length {} and {}",
            f.len(),
            extracted.len()
        )));
    }
    Ok(f.hamming(extracted))
}

/// Compromised bits when some extracted bits are unresolved (`None`, a tied
/// vote). An unresolved bit counts as compromised.
pub fn num_cmp_partial(f: &FingerprintCode, recovered: &[Option<bool>]) -> Result<usize> {
    Ok(recovered.len() - matches_partial(f, recovered)?)
}

/// Bits of `f` reproduced by the extraction; unresolved bits match nobody.
pub fn matches_partial(f: &FingerprintCode, recovered: &[Option<bool>]) -> Result<usize> {
    if f.len() != recovered.len() {
        return Err(FpError::ShapeError(format!(
            "code of length {} against {} recovered bits",
            f.len(),
            recovered.len()
        )));
    }
    Ok(f
        .bits()
        .iter()
        .zip(recovered)
        .filter(|(b, r)| **r == Some(**b))
        .count())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "t")]
pub enum Rank {
    UniquelyAccusable,
    /// Fraction of innocents matching at least as many bits as the leaker.
    TopT(f64),
}

impl Rank {
    pub fn is_unique(&self) -> bool {
        matches!(self, Rank::UniquelyAccusable)
    }
}

impl std::fmt::Display for Rank {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Rank::UniquelyAccusable => f.write_str("u"),
            Rank::TopT(t) => write!(f, "<{:.1}%", t * 100.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessReport {
    pub num_cmp: usize,
    pub rank: Rank,
    /// Bits matched by the leaker's code.
    pub m0: usize,
}

fn rank_from_counts(m0: usize, innocents: &[usize]) -> Rank {
    let at_least = innocents.iter().filter(|&&m| m >= m0).count();
    if at_least == 0 {
        Rank::UniquelyAccusable
    } else {
        Rank::TopT(at_least as f64 / innocents.len() as f64)
    }
}

/// Accusation outcome for the leaker against a set of innocent recipients.
pub fn accusable_rank(
    extracted: &FingerprintCode,
    malicious: &FingerprintCode,
    innocents: &[FingerprintCode],
) -> Result<RobustnessReport> {
    let bits: Vec<Option<bool>> = extracted.bits().iter().map(|&b| Some(b)).collect();
    accusable_rank_partial(&bits, malicious, innocents)
}

/// [`accusable_rank`] from recovered bits that may be unresolved.
pub fn accusable_rank_partial(
    recovered: &[Option<bool>],
    malicious: &FingerprintCode,
    innocents: &[FingerprintCode],
) -> Result<RobustnessReport> {
    let m0 = matches_partial(malicious, recovered)?;
    let counts = innocents
        .iter()
        .map(|c| matches_partial(c, recovered))
        .collect::<Result<Vec<_>>>()?;
    Ok(RobustnessReport {
        num_cmp: recovered.len() - m0,
        rank: rank_from_counts(m0, &counts),
        m0,
    })
}

/// `1 - differing cells / (M * |F|)`.
pub fn accuracy(fingerprinted: &Relation, original: &Relation) -> Result<f64> {
    let diff = original.diff_positions(fingerprinted)?.len();
    let cells = original.n_cells();
    Ok(if cells == 0 { 1.0 } else { 1.0 - diff as f64 / cells as f64 })
}

/// Fraction of joint cells `(p, q, a, b)` over ordered pairs whose
/// probability moved by less than `tau_col`.
pub fn p_col(fingerprinted: &Relation, original: &Relation, tau_col: f64) -> Result<f64> {
    original.check_same_shape(fingerprinted)?;
    if !(tau_col > 0.0) {
        return Err(FpError::InvalidParameter("tau_col must be > 0".into()));
    }
    let a = joint_distributions(fingerprinted);
    let b = joint_distributions(original);
    let mut kept = 0usize;
    let mut total = 0usize;
    for (p, q) in pairs(original.n_attrs()) {
        for (x, y) in a.matrix(p, q).iter().zip(b.matrix(p, q)) {
            total += 1;
            kept += usize::from((x - y).abs() < tau_col);
        }
    }
    // Each unordered cell stands for two ordered ones, so the ratio is unchanged.
    Ok(if total == 0 { 1.0 } else { kept as f64 / total as f64 })
}

/// Fraction of ordered same-community record pairs whose similarity moved
/// by less than `tau_row`.
pub fn p_row(fingerprinted: &Relation, original: &Relation, comm: &CommunityAssignment, tau_row: f64) -> Result<f64> {
    original.check_same_shape(fingerprinted)?;
    if !(tau_row > 0.0) {
        return Err(FpError::InvalidParameter("tau_row must be > 0".into()));
    }
    if comm.membership.len() != original.n_rows() {
        return Err(FpError::ShapeError("assignment does not cover the relation".into()));
    }
    let sim: Vec<f64> = (0..=original.n_attrs()).map(|d| (-(d as f64)).exp()).collect();
    let mut kept = 0u64;
    let mut total = 0u64;
    for members in comm.members() {
        for (x, &i) in members.iter().enumerate() {
            for &j in &members[x + 1..] {
                let s0 = sim[hamming(original.row(i), original.row(j))];
                let s1 = sim[hamming(fingerprinted.row(i), fingerprinted.row(j))];
                total += 2;
                if (s1 - s0).abs() < tau_row {
                    kept += 2;
                }
            }
        }
    }
    Ok(if total == 0 { 1.0 } else { kept as f64 / total as f64 })
}

/// Uncentered covariance `sum_i r_i^T r_i / M`, row-major `|F| x |F|`.
pub fn uncentered_cov(relation: &Relation) -> Vec<f64> {
    let n = relation.n_attrs();
    let mut cov = vec![0.0; n * n];
    for row in relation.rows() {
        for p in 0..n {
            let x = f64::from(row[p]);
            for q in 0..n {
                cov[p * n + q] += x * f64::from(row[q]);
            }
        }
    }
    let m = relation.n_rows().max(1) as f64;
    cov.iter_mut().for_each(|v| *v /= m);
    cov
}

/// `1 - ||cov(R~) - cov(R)||_F / ||cov(R)||_F`.
pub fn p_cov(fingerprinted: &Relation, original: &Relation) -> Result<f64> {
    original.check_same_shape(fingerprinted)?;
    let base = uncentered_cov(original);
    let other = uncentered_cov(fingerprinted);
    let norm = base.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Err(FpError::DegenerateBaseline);
    }
    let diff = base
        .iter()
        .zip(&other)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    Ok(1.0 - diff / norm)
}

/// A named statistic of one attribute.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StatQuery {
    /// Fraction of records whose code is at least `threshold`.
    FrequencyAtLeast { attribute: String, threshold: u32 },
    /// Population standard deviation of the codes.
    StdDev { attribute: String },
}

impl StatQuery {
    pub fn name(&self) -> String {
        match self {
            StatQuery::FrequencyAtLeast { attribute, threshold } => format!("freq({attribute}>={threshold})"),
            StatQuery::StdDev { attribute } => format!("std({attribute})"),
        }
    }

    fn attribute(&self) -> &str {
        match self {
            StatQuery::FrequencyAtLeast { attribute, .. } | StatQuery::StdDev { attribute } => attribute,
        }
    }

    fn eval(&self, relation: &Relation, attr: usize) -> f64 {
        let col = relation.column(attr);
        let m = col.len().max(1) as f64;
        match self {
            StatQuery::FrequencyAtLeast { threshold, .. } => {
                col.iter().filter(|&&v| v >= *threshold).count() as f64 / m
            }
            StatQuery::StdDev { .. } => {
                let mean = col.iter().map(|&v| f64::from(v)).sum::<f64>() / m;
                (col.iter().map(|&v| (f64::from(v) - mean).powi(2)).sum::<f64>() / m).sqrt()
            }
        }
    }
}

/// `|stat(R~) - stat(R)|` for each query, keyed by query name.
pub fn stat_utilities(fingerprinted: &Relation, original: &Relation, queries: &[StatQuery]) -> Result<Vec<(String, f64)>> {
    original.check_same_shape(fingerprinted)?;
    queries
        .iter()
        .map(|q| {
            let attr = original
                .attribute_index(q.attribute())
                .ok_or_else(|| FpError::SchemaMismatch(format!("unknown attribute `{}`", q.attribute())))?;
            Ok((q.name(), (q.eval(fingerprinted, attr) - q.eval(original, attr)).abs()))
        })
        .collect()
}

/// Utility of a modified copy relative to the original.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtilityReport {
    pub acc: f64,
    pub p_col: f64,
    pub tau_col: f64,
    pub p_row: f64,
    pub tau_row: f64,
    pub p_cov: f64,
    pub per_chg: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub stats: Vec<(String, f64)>,
}

pub fn utility_report(
    modified: &Relation,
    original: &Relation,
    comm: &CommunityAssignment,
    tau_col: f64,
    tau_row: f64,
    queries: &[StatQuery],
) -> Result<UtilityReport> {
    let acc = accuracy(modified, original)?;
    Ok(UtilityReport {
        acc,
        p_col: p_col(modified, original, tau_col)?,
        tau_col,
        p_row: p_row(modified, original, comm, tau_row)?,
        tau_row,
        p_cov: p_cov(modified, original)?,
        per_chg: 1.0 - acc,
        stats: stat_utilities(modified, original, queries)?,
    })
}

/// Closed-form column-attack confidence gain score for attribute `p` taking
/// value `a`.
///
/// `n_attrs` is the attribute count in the expression; `partner_cards` lists
/// `k_q` for every partner attribute `q != p`.
pub fn conf_gain_col(tau: f64, gamma_ratio: f64, n_attrs: usize, freq_a_p: f64, partner_cards: &[u32]) -> Result<f64> {
    if freq_a_p <= 0.0 {
        return Err(FpError::DegenerateFrequency);
    }
    if !(gamma_ratio > 0.0 && gamma_ratio < 1.0) || n_attrs == 0 || tau < 0.0 {
        return Err(FpError::InvalidParameter("conf_gain_col needs gamma in (0,1), tau >= 0, n_attrs >= 1".into()));
    }
    let scale = gamma_ratio / n_attrs as f64;
    let base = (tau / (scale * 2.0 * freq_a_p)).clamp(0.0, 1.0);
    let prod: f64 = partner_cards.iter().map(|&k| base.powi(k as i32)).product();
    Ok((1.0 - prod) / (scale * freq_a_p))
}

/// Numerator of [`conf_gain_row`]: probability that a record is flagged.
pub fn row_flag_probability(tau: f64, gamma_ratio: f64, n_c: usize) -> f64 {
    if n_c <= 1 {
        return 0.0;
    }
    let n = n_c - 1;
    let hit = 2.0 * gamma_ratio - gamma_ratio * gamma_ratio;
    let miss = (1.0 - gamma_ratio) * (1.0 - gamma_ratio);
    let upper = (tau.max(0.0).floor() as usize).min(n);
    // Binomial terms computed in log space to stay finite for large communities.
    let ln_choose = |n: usize, j: usize| -> f64 { ln_factorial(n) - ln_factorial(j) - ln_factorial(n - j) };
    let cdf: f64 = (0..=upper)
        .map(|j| {
            let ln = ln_choose(n, j) + j as f64 * hit.ln() + (n - j) as f64 * miss.ln();
            ln.exp()
        })
        .sum();
    (1.0 - cdf).max(0.0)
}

fn ln_factorial(n: usize) -> f64 {
    (2..=n).map(|k| (k as f64).ln()).sum()
}

/// Closed-form row-attack confidence gain score.
pub fn conf_gain_row(tau: f64, gamma_ratio: f64, n_c: usize) -> f64 {
    row_flag_probability(tau, gamma_ratio, n_c) / gamma_ratio
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::relation::{AttributeSpec, PrimaryKey};

    fn rel(kp: &[u32], rows: Vec<Vec<u32>>) -> Relation {
        let schema = kp
            .iter()
            .enumerate()
            .map(|(i, &k)| AttributeSpec::categorical(format!("a{i}"), k))
            .collect();
        let keys = (0..rows.len() as u64).map(PrimaryKey::Int).collect();
        Relation::new(schema, keys, rows).unwrap()
    }

    fn code(bits: &[u8]) -> FingerprintCode {
        FingerprintCode::from_bits(bits.iter().map(|&b| b == 1).collect())
    }

    #[test]
    fn num_cmp_examples() {
        let f = code(&[1, 0, 1, 1, 0]);
        assert_eq!(num_cmp(&f, &f).unwrap(), 0);
        assert_eq!(num_cmp(&f, &f.complement()).unwrap(), 5);
        assert_eq!(num_cmp(&f, &code(&[0, 1, 0, 1, 0])).unwrap(), 3);
        assert!(num_cmp(&f, &code(&[1])).is_err());
        assert_eq!(num_cmp_partial(&f, &[Some(true), None, Some(true), Some(false), None]).unwrap(), 3);
    }

    #[test]
    fn rank_examples() {
        let f = code(&[1, 1, 1, 1]);
        let innocents: Vec<FingerprintCode> = (0..4).map(|_| f.clone()).collect();
        let rep = accusable_rank(&f, &code(&[0, 1, 1, 1]), &innocents).unwrap();
        assert_eq!(rep.rank, Rank::TopT(1.0));
        let rep = accusable_rank(&f, &f, &[code(&[0, 1, 1, 1]), code(&[0, 0, 0, 0])]).unwrap();
        assert_eq!(rep.rank, Rank::UniquelyAccusable);
        assert_eq!(rep.m0, 4);
        assert_eq!(accusable_rank(&f, &f, &[]).unwrap().rank, Rank::UniquelyAccusable);
        let malicious = code(&[1, 1, 0, 0]);
        let mut list = vec![code(&[0, 0, 0, 0]); 7];
        list.extend([code(&[1, 1, 0, 0]), code(&[1, 1, 1, 0]), code(&[1, 1, 1, 1])]);
        assert_eq!(accusable_rank(&f, &malicious, &list).unwrap().rank, Rank::TopT(0.3));
    }

    #[test]
    fn accuracy_examples() {
        let a = rel(&[4; 4], vec![vec![0, 1, 2, 3], vec![3, 2, 1, 0]]);
        let mut b = a.clone();
        assert_eq!(accuracy(&b, &a).unwrap(), 1.0);
        b.set(0, 0, 1).unwrap();
        b.set(1, 3, 1).unwrap();
        assert_eq!(accuracy(&b, &a).unwrap(), 0.75);
    }

    #[test]
    fn p_col_toy() {
        let a = rel(&[2, 2], vec![vec![0, 0], vec![0, 1], vec![1, 0], vec![1, 1]]);
        let mut b = a.clone();
        assert_eq!(p_col(&b, &a, 0.1).unwrap(), 1.0);
        b.set(0, 1, 1).unwrap(); // (0,0) -> (0,1): two cells move by 0.25
        assert_eq!(p_col(&b, &a, 0.1).unwrap(), 0.5);
        assert_eq!(p_col(&b, &a, 2.0).unwrap(), 1.0);
    }

    #[test]
    fn p_row_toy() {
        let a = rel(&[4, 4, 4], vec![vec![0, 0, 0], vec![0, 0, 1], vec![0, 1, 1]]);
        let comm = CommunityAssignment::single(3);
        assert_eq!(p_row(&a, &a, &comm, 0.1).unwrap(), 1.0);
        let mut b = a.clone();
        b.set(0, 0, 3).unwrap();
        // row 0 moves from distance (1, 2) to (2, 3): gaps 0.233 and 0.086
        let v = p_row(&b, &a, &comm, 0.1).unwrap();
        assert!((v - 4.0 / 6.0).abs() < 1e-12);
        assert_eq!(p_row(&b, &a, &comm, 10.0).unwrap(), 1.0);
    }

    #[test]
    fn p_cov_examples() {
        let a = rel(&[4, 4], vec![vec![1, 0], vec![0, 2]]);
        assert_eq!(p_cov(&a, &a).unwrap(), 1.0);
        let mut b = a.clone();
        b.set(0, 1, 1).unwrap();
        // cov(a) = [[0.5,0],[0,2]]; cov(b) = [[0.5,0.5],[0.5,2.5]]
        let expected = 1.0 - (0.25f64 + 0.25 + 0.25).sqrt() / (0.25f64 + 4.0).sqrt();
        assert!((p_cov(&b, &a).unwrap() - expected).abs() < 1e-12);
        let z = rel(&[2, 2], vec![vec![0, 0]]);
        assert!(matches!(p_cov(&z, &z), Err(FpError::DegenerateBaseline)));
    }

    #[test]
    fn stat_utility_counts() {
        let a = rel(&[4], (0..10).map(|i| vec![i % 4]).collect());
        let mut b = a.clone();
        b.set(0, 0, 3).unwrap();
        let q = [
            StatQuery::FrequencyAtLeast { attribute: "a0".into(), threshold: 2 },
            StatQuery::StdDev { attribute: "a0".into() },
        ];
        let zero = stat_utilities(&a, &a, &q).unwrap();
        assert!(zero.iter().all(|(_, d)| *d == 0.0));
        let d = stat_utilities(&b, &a, &q).unwrap();
        assert!((d[0].1 - 0.1).abs() < 1e-12);
        assert!(stat_utilities(&b, &a, &[StatQuery::StdDev { attribute: "zz".into() }]).is_err());
    }

    #[test]
    fn conf_gain_examples() {
        assert!((conf_gain_row(0.0, 0.1, 3) - 3.439).abs() < 1e-12);
        assert_eq!(conf_gain_row(0.0, 0.1, 1), 0.0);
        let g = conf_gain_col(1e-4, 1.0 / 35.0, 14, 0.2, &[3, 3]).unwrap();
        let scale = (1.0 / 35.0) / 14.0;
        let base: f64 = 1e-4 / (scale * 0.4);
        let expected = (1.0 - base.powi(3) * base.powi(3)) / (scale * 0.2);
        assert!((g - expected).abs() < 1e-9 * expected);
        assert_eq!(conf_gain_col(10.0, 0.1, 3, 0.5, &[2]).unwrap(), 0.0);
        assert!(matches!(conf_gain_col(1e-4, 0.1, 3, 0.0, &[2]), Err(FpError::DegenerateFrequency)));
        let near_zero = conf_gain_col(1e-300, 0.1, 4, 0.25, &[2, 3]).unwrap();
        assert!((near_zero - 4.0 / (0.1 * 0.25)).abs() < 1e-6);
    }
}
