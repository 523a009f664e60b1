//! Correlation models of a relation.
//!
//! Column-wise: joint distributions of every attribute pair. Row-wise: the
//! similarity `s_ij = exp(-hamming(r_i, r_j))` between records that share a
//! community, with communities found by K-means on the coded rows.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{FpError, Result};
use crate::relation::Relation;

/// Tolerance for marginals recovered from different partners.
pub const MARGINAL_TOL: f64 = 1e-9;

/// Index of the unordered pair `p < q` among `n` attributes.
#[inline]
pub fn pair_index(p: usize, q: usize, n: usize) -> usize {
    debug_assert!(p < q && q < n);
    p * n - p * (p + 1) / 2 + (q - p - 1)
}

/// All unordered attribute pairs `(p, q)` with `p < q`, in `pair_index` order.
pub fn pairs(n: usize) -> impl Iterator<Item = (usize, usize)> {
    (0..n).flat_map(move |p| (p + 1..n).map(move |q| (p, q)))
}

/// Joint distribution of every unordered attribute pair, stored dense and
/// row-major as `k_p x k_q` for `p < q`.
#[derive(Debug, Clone, PartialEq)]
pub struct JointDistributionSet {
    cardinalities: Vec<u32>,
    matrices: Vec<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct JointPairRepr {
    p: usize,
    q: usize,
    matrix: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct JointRepr {
    cardinalities: Vec<u32>,
    pairs: Vec<JointPairRepr>,
}

impl JointDistributionSet {
    /// Builds a set from per-pair matrices given in `pairs(n)` order.
    pub fn from_matrices(cardinalities: Vec<u32>, matrices: Vec<Vec<f64>>) -> Result<Self> {
        let n = cardinalities.len();
        if matrices.len() != n * n.saturating_sub(1) / 2 {
            return Err(FpError::ShapeError(format!(
                "{} matrices for {n} attributes",
                matrices.len()
            )));
        }
        for ((p, q), m) in pairs(n).zip(&matrices) {
            let want = (cardinalities[p] * cardinalities[q]) as usize;
            if m.len() != want {
                return Err(FpError::ShapeError(format!(
                    "pair ({p},{q}) has {} entries, expected {want}",
                    m.len()
                )));
            }
            if m.iter().any(|v| !v.is_finite() || *v < 0.0) {
                return Err(FpError::ShapeError(format!("pair ({p},{q}) has negative or non-finite mass")));
            }
            let total: f64 = m.iter().sum();
            if (total - 1.0).abs() > 1e-6 {
                return Err(FpError::ShapeError(format!("pair ({p},{q}) sums to {total}")));
            }
        }
        Ok(Self {
            cardinalities,
            matrices,
        })
    }

    pub fn cardinalities(&self) -> &[u32] {
        &self.cardinalities
    }

    pub fn n_attrs(&self) -> usize {
        self.cardinalities.len()
    }

    /// Matrix of `(p, q)` for `p < q`, row-major `k_p x k_q`.
    pub fn matrix(&self, p: usize, q: usize) -> &[f64] {
        &self.matrices[pair_index(p, q, self.n_attrs())]
    }

    /// `J_{p,q}(a, b)` for any ordered pair `p != q`.
    pub fn get(&self, p: usize, q: usize, a: u32, b: u32) -> f64 {
        if p < q {
            self.matrix(p, q)[(a * self.cardinalities[q] + b) as usize]
        } else {
            self.matrix(q, p)[(b * self.cardinalities[p] + a) as usize]
        }
    }

    /// Joint of `(p, q)` as a `k_p x k_q` row-major matrix for any ordered pair.
    pub fn oriented(&self, p: usize, q: usize) -> Vec<f64> {
        if p < q {
            return self.matrix(p, q).to_vec();
        }
        let (kp, kq) = (self.cardinalities[p] as usize, self.cardinalities[q] as usize);
        let src = self.matrix(q, p);
        let mut out = vec![0.0; kp * kq];
        for a in 0..kp {
            for b in 0..kq {
                out[a * kq + b] = src[b * kp + a];
            }
        }
        out
    }

    /// Marginal of `p`, checked for agreement across every partner attribute.
    pub fn marginal(&self, p: usize) -> Result<Vec<f64>> {
        let n = self.n_attrs();
        let kp = self.cardinalities[p] as usize;
        if n < 2 {
            return Err(FpError::InvalidParameter("marginals need at least two attributes".into()));
        }
        let mut reference: Option<Vec<f64>> = None;
        for q in (0..n).filter(|&q| q != p) {
            let kq = self.cardinalities[q] as usize;
            let m = self.oriented(p, q);
            let marg: Vec<f64> = (0..kp).map(|a| m[a * kq..(a + 1) * kq].iter().sum()).collect();
            match &reference {
                None => reference = Some(marg),
                Some(r) => {
                    let gap = r
                        .iter()
                        .zip(&marg)
                        .map(|(x, y)| (x - y).abs())
                        .fold(0.0f64, f64::max);
                    if gap > MARGINAL_TOL {
                        return Err(FpError::InconsistentJointSet { attribute: p, gap });
                    }
                }
            }
        }
        Ok(reference.expect("at least one partner"))
    }

    pub fn pearson(&self, p: usize, q: usize) -> Result<f64> {
        pearson_from_joint(
            &self.oriented(p, q),
            self.cardinalities[p] as usize,
            self.cardinalities[q] as usize,
        )
    }

    /// Frobenius distance between the `(p, q)` matrices of two sets.
    pub fn frobenius_gap(&self, other: &JointDistributionSet, p: usize, q: usize) -> f64 {
        let (p, q) = if p < q { (p, q) } else { (q, p) };
        self.matrix(p, q)
            .iter()
            .zip(other.matrix(p, q))
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    pub fn to_json(&self) -> String {
        let repr = JointRepr {
            cardinalities: self.cardinalities.clone(),
            pairs: pairs(self.n_attrs())
                .zip(&self.matrices)
                .map(|((p, q), m)| JointPairRepr { p, q, matrix: m.clone() })
                .collect(),
        };
        serde_json::to_string(&repr).expect("joint set serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let repr: JointRepr = serde_json::from_str(text)?;
        let n = repr.cardinalities.len();
        let mut matrices = vec![Vec::new(); n * n.saturating_sub(1) / 2];
        let mut seen = vec![false; matrices.len()];
        for pr in repr.pairs {
            if pr.p >= pr.q || pr.q >= n {
                return Err(FpError::ShapeError(format!("invalid pair ({}, {})", pr.p, pr.q)));
            }
            let idx = pair_index(pr.p, pr.q, n);
            seen[idx] = true;
            matrices[idx] = pr.matrix;
        }
        if seen.iter().any(|s| !s) {
            return Err(FpError::ShapeError("joint set is missing pairs".into()));
        }
        Self::from_matrices(repr.cardinalities, matrices)
    }
}

/// Pair count tables of a relation, the integer form of its joint set.
pub(crate) fn joint_counts(relation: &Relation) -> Vec<Vec<u32>> {
    let n = relation.n_attrs();
    let card = relation.cardinalities();
    let mut counts: Vec<Vec<u32>> = pairs(n)
        .map(|(p, q)| vec![0u32; (card[p] * card[q]) as usize])
        .collect();
    for row in relation.rows() {
        let mut idx = 0;
        for p in 0..n {
            for q in p + 1..n {
                counts[idx][(row[p] * card[q] + row[q]) as usize] += 1;
                idx += 1;
            }
        }
    }
    counts
}

/// Empirical joint distribution of every attribute pair.
pub fn joint_distributions(relation: &Relation) -> JointDistributionSet {
    let m = relation.n_rows().max(1) as f64;
    let matrices = joint_counts(relation)
        .into_iter()
        .map(|c| c.into_iter().map(|v| f64::from(v) / m).collect())
        .collect();
    JointDistributionSet {
        cardinalities: relation.cardinalities(),
        matrices,
    }
}

/// Marginal of `p` in `joint` (see [`JointDistributionSet::marginal`]).
pub fn marginal(joint: &JointDistributionSet, p: usize) -> Result<Vec<f64>> {
    joint.marginal(p)
}

/// Empirical frequencies of the codes of `attr`.
pub fn empirical_marginal(relation: &Relation, attr: usize) -> Vec<f64> {
    let mut counts = vec![0.0; relation.cardinality(attr) as usize];
    for i in 0..relation.n_rows() {
        counts[relation.get(i, attr) as usize] += 1.0;
    }
    let m = relation.n_rows().max(1) as f64;
    counts.iter_mut().for_each(|c| *c /= m);
    counts
}

/// Pearson correlation of two coded attributes from their `kp x kq` joint.
pub fn pearson_from_joint(joint: &[f64], kp: usize, kq: usize) -> Result<f64> {
    if joint.len() != kp * kq {
        return Err(FpError::ShapeError(format!("{} entries for a {kp}x{kq} joint", joint.len())));
    }
    let mut mp = vec![0.0; kp];
    let mut mq = vec![0.0; kq];
    for a in 0..kp {
        for b in 0..kq {
            mp[a] += joint[a * kq + b];
            mq[b] += joint[a * kq + b];
        }
    }
    let mean = |m: &[f64]| m.iter().enumerate().map(|(a, w)| a as f64 * w).sum::<f64>();
    let (mu_p, mu_q) = (mean(&mp), mean(&mq));
    let var = |m: &[f64], mu: f64| {
        m.iter()
            .enumerate()
            .map(|(a, w)| (a as f64 - mu).powi(2) * w)
            .sum::<f64>()
    };
    let (vp, vq) = (var(&mp, mu_p), var(&mq, mu_q));
    if vp <= 1e-15 || vq <= 1e-15 {
        return Err(FpError::DegenerateAttribute);
    }
    let mut cov = 0.0;
    for a in 0..kp {
        for b in 0..kq {
            cov += (a as f64 - mu_p) * (b as f64 - mu_q) * joint[a * kq + b];
        }
    }
    Ok((cov / (vp.sqrt() * vq.sqrt())).clamp(-1.0, 1.0))
}

/// Partition of rows into communities.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommunityAssignment {
    pub n_communities: usize,
    pub membership: Vec<usize>,
}

impl CommunityAssignment {
    pub fn new(n_communities: usize, membership: Vec<usize>) -> Result<Self> {
        if n_communities == 0 {
            return Err(FpError::InvalidParameter("at least one community required".into()));
        }
        if let Some(bad) = membership.iter().find(|&&c| c >= n_communities) {
            return Err(FpError::InvalidParameter(format!(
                "community id {bad} out of range for {n_communities} communities"
            )));
        }
        Ok(Self {
            n_communities,
            membership,
        })
    }

    /// Everyone in one community.
    pub fn single(rows: usize) -> Self {
        Self {
            n_communities: 1,
            membership: vec![0; rows],
        }
    }

    /// Row indices of every community, ascending.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.n_communities];
        for (row, &c) in self.membership.iter().enumerate() {
            out[c].push(row);
        }
        out
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.n_communities];
        for &c in &self.membership {
            sizes[c] += 1;
        }
        sizes
    }
}

/// Number of attributes on which two coded rows differ.
#[inline]
pub fn hamming(a: &[u32], b: &[u32]) -> usize {
    a.iter().zip(b).filter(|(x, y)| x != y).count()
}

/// Similarities of one community, condensed upper triangle over `members`.
#[derive(Debug, Clone, PartialEq)]
pub struct CommunityRelations {
    pub members: Vec<usize>,
    values: Vec<f64>,
}

impl CommunityRelations {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    #[inline]
    fn slot(&self, i: usize, j: usize) -> usize {
        let (i, j) = if i < j { (i, j) } else { (j, i) };
        let n = self.members.len();
        i * n - i * (i + 1) / 2 + (j - i - 1)
    }

    /// `s` between the `i`-th and `j`-th members (local indices, `i != j`).
    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[self.slot(i, j)]
    }

    /// Total absolute difference `sum_j |s_ij - other_ij|` for every member `i`.
    pub fn row_discrepancy(&self, other: &CommunityRelations) -> Result<Vec<f64>> {
        if self.members != other.members {
            return Err(FpError::ShapeError("communities have different members".into()));
        }
        let n = self.members.len();
        let mut out = vec![0.0; n];
        let mut idx = 0;
        for i in 0..n {
            for j in i + 1..n {
                let d = (self.values[idx] - other.values[idx]).abs();
                out[i] += d;
                out[j] += d;
                idx += 1;
            }
        }
        Ok(out)
    }
}

/// Row-wise correlation model: similarities inside each community.
#[derive(Debug, Clone, PartialEq)]
pub struct StatRelationSet {
    pub communities: Vec<CommunityRelations>,
}

#[derive(Serialize, Deserialize)]
struct Edge {
    i: usize,
    j: usize,
    s: f64,
}

#[derive(Serialize, Deserialize)]
struct CommunityRepr {
    members: Vec<usize>,
    edges: Vec<Edge>,
}

impl StatRelationSet {
    /// Same discrepancy as [`CommunityRelations::row_discrepancy`], per
    /// community and keyed by local member index.
    pub fn discrepancies(&self, other: &StatRelationSet) -> Result<Vec<Vec<f64>>> {
        if self.communities.len() != other.communities.len() {
            return Err(FpError::ShapeError("different community counts".into()));
        }
        self.communities
            .iter()
            .zip(&other.communities)
            .map(|(a, b)| a.row_discrepancy(b))
            .collect()
    }

    /// JSON as a list of communities, each an edge list over row indices.
    pub fn to_json(&self) -> String {
        let repr: Vec<CommunityRepr> = self
            .communities
            .iter()
            .map(|c| {
                let n = c.members.len();
                let mut edges = Vec::with_capacity(c.values.len());
                for i in 0..n {
                    for j in i + 1..n {
                        edges.push(Edge {
                            i: c.members[i],
                            j: c.members[j],
                            s: c.get(i, j),
                        });
                    }
                }
                CommunityRepr {
                    members: c.members.clone(),
                    edges,
                }
            })
            .collect();
        serde_json::to_string(&repr).expect("stat relations serialize")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let repr: Vec<CommunityRepr> = serde_json::from_str(text)?;
        let mut communities = Vec::with_capacity(repr.len());
        for c in repr {
            let n = c.members.len();
            let local: std::collections::HashMap<usize, usize> =
                c.members.iter().enumerate().map(|(l, &r)| (r, l)).collect();
            let mut comm = CommunityRelations {
                members: c.members,
                values: vec![f64::NAN; n * n.saturating_sub(1) / 2],
            };
            for e in c.edges {
                let (Some(&li), Some(&lj)) = (local.get(&e.i), local.get(&e.j)) else {
                    return Err(FpError::ShapeError(format!("edge ({}, {}) leaves its community", e.i, e.j)));
                };
                if li == lj {
                    return Err(FpError::ShapeError("self edge in stat relations".into()));
                }
                let slot = comm.slot(li, lj);
                comm.values[slot] = e.s;
            }
            if comm.values.iter().any(|v| v.is_nan()) {
                return Err(FpError::ShapeError("community is missing edges".into()));
            }
            communities.push(comm);
        }
        Ok(Self { communities })
    }
}

/// `s_ij = exp(-hamming)` for every pair inside each community.
pub fn stat_relations(relation: &Relation, comm: &CommunityAssignment) -> Result<StatRelationSet> {
    if comm.membership.len() != relation.n_rows() {
        return Err(FpError::ShapeError(format!(
            "assignment covers {} rows, relation has {}",
            comm.membership.len(),
            relation.n_rows()
        )));
    }
    let table: Vec<f64> = (0..=relation.n_attrs()).map(|d| (-(d as f64)).exp()).collect();
    let communities = comm
        .members()
        .into_iter()
        .map(|members| {
            let n = members.len();
            let mut values = Vec::with_capacity(n * n.saturating_sub(1) / 2);
            for i in 0..n {
                let ri = relation.row(members[i]);
                for &mj in &members[i + 1..] {
                    values.push(table[hamming(ri, relation.row(mj))]);
                }
            }
            CommunityRelations { members, values }
        })
        .collect();
    Ok(StatRelationSet { communities })
}

fn sq_dist(a: &[f64], b: &[u32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, &y)| {
            let d = x - f64::from(y);
            d * d
        })
        .sum()
}

/// Result of a K-means fit.
#[derive(Debug, Clone, PartialEq)]
pub struct KMeansFit {
    pub assignment: CommunityAssignment,
    pub centroids: Vec<Vec<f64>>,
    /// Within-cluster sum of squared distances.
    pub sse: f64,
}

pub const KMEANS_MAX_ITER: usize = 100;

/// K-means on coded rows with seeded farthest-point initialization.
pub fn kmeans_communities(relation: &Relation, c: usize, seed: u64) -> Result<CommunityAssignment> {
    Ok(kmeans_fit(relation, c, seed)?.assignment)
}

pub fn kmeans_fit(relation: &Relation, c: usize, seed: u64) -> Result<KMeansFit> {
    let m = relation.n_rows();
    if c == 0 {
        return Err(FpError::InvalidParameter("at least one community required".into()));
    }
    if c > m {
        return Err(FpError::TooManyCommunities { requested: c, rows: m });
    }
    let n = relation.n_attrs();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // Farthest-point seeding: a random first centre, then repeatedly the row
    // farthest from all chosen centres (ties to the lowest row index).
    let first = rng.gen_range(0..m);
    let mut chosen = vec![false; m];
    chosen[first] = true;
    let to_f = |row: &[u32]| row.iter().map(|&v| f64::from(v)).collect::<Vec<f64>>();
    let mut centroids = vec![to_f(relation.row(first))];
    let mut nearest: Vec<f64> = (0..m).map(|i| sq_dist(&centroids[0], relation.row(i))).collect();
    while centroids.len() < c {
        let mut best = usize::MAX;
        for i in 0..m {
            if !chosen[i] && (best == usize::MAX || nearest[i] > nearest[best]) {
                best = i;
            }
        }
        chosen[best] = true;
        let centre = to_f(relation.row(best));
        for (i, d) in nearest.iter_mut().enumerate() {
            *d = d.min(sq_dist(&centre, relation.row(i)));
        }
        centroids.push(centre);
    }

    let mut assign = vec![usize::MAX; m];
    for _ in 0..KMEANS_MAX_ITER {
        let mut next = assign_rows(relation, &centroids);
        repair_empty(relation, &centroids, &mut next, c);
        let converged = next == assign;
        assign = next;
        centroids = recompute_centroids(relation, &assign, c, n);
        if converged {
            break;
        }
    }
    let sse = (0..m).map(|i| sq_dist(&centroids[assign[i]], relation.row(i))).sum();
    Ok(KMeansFit {
        assignment: CommunityAssignment {
            n_communities: c,
            membership: assign,
        },
        centroids,
        sse,
    })
}

fn assign_rows(relation: &Relation, centroids: &[Vec<f64>]) -> Vec<usize> {
    (0..relation.n_rows())
        .map(|i| {
            let row = relation.row(i);
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (k, cen) in centroids.iter().enumerate() {
                let d = sq_dist(cen, row);
                if d < best_d {
                    best_d = d;
                    best = k;
                }
            }
            best
        })
        .collect()
}

/// Gives every empty cluster the row farthest from its centre within the
/// currently largest cluster.
fn repair_empty(relation: &Relation, centroids: &[Vec<f64>], assign: &mut [usize], c: usize) {
    loop {
        let mut sizes = vec![0usize; c];
        for &a in assign.iter() {
            sizes[a] += 1;
        }
        let Some(empty) = sizes.iter().position(|&s| s == 0) else {
            return;
        };
        let largest = (0..c).max_by(|&a, &b| sizes[a].cmp(&sizes[b]).then(b.cmp(&a))).expect("c >= 1");
        let mut far = usize::MAX;
        let mut far_d = -1.0;
        for (i, &a) in assign.iter().enumerate() {
            if a == largest {
                let d = sq_dist(&centroids[largest], relation.row(i));
                if d > far_d {
                    far_d = d;
                    far = i;
                }
            }
        }
        assign[far] = empty;
    }
}

fn recompute_centroids(relation: &Relation, assign: &[usize], c: usize, n: usize) -> Vec<Vec<f64>> {
    let mut sums = vec![vec![0.0; n]; c];
    let mut counts = vec![0usize; c];
    for (i, &a) in assign.iter().enumerate() {
        counts[a] += 1;
        for (s, &v) in sums[a].iter_mut().zip(relation.row(i)) {
            *s += f64::from(v);
        }
    }
    for (s, &k) in sums.iter_mut().zip(&counts) {
        if k > 0 {
            s.iter_mut().for_each(|v| *v /= k as f64);
        }
    }
    sums
}

/// Per-coordinate variance floor: the variance of a unit-width uniform
/// quantization step. Keeps the criterion finite when clusters are exact.
pub const BIC_VARIANCE_FLOOR: f64 = 1.0 / 12.0;

/// Gaussian-approximation BIC of a K-means fit with `c` centres.
pub fn kmeans_bic(sse: f64, m: usize, n_attrs: usize, c: usize) -> f64 {
    let cells = (m * n_attrs) as f64;
    let var = (sse / cells).max(BIC_VARIANCE_FLOOR);
    cells * var.ln() + (c * n_attrs) as f64 * (m as f64).ln()
}

/// Community count in `c_range` minimising the BIC, ties to the smallest.
pub fn bic_select_c(relation: &Relation, c_range: &[usize], seed: u64) -> Result<usize> {
    let mut range = c_range.to_vec();
    range.sort_unstable();
    range.dedup();
    if range.is_empty() {
        return Err(FpError::InvalidParameter("empty community range".into()));
    }
    let mut best: Option<(usize, f64)> = None;
    for c in range {
        let fit = kmeans_fit(relation, c, seed)?;
        let bic = kmeans_bic(fit.sse, relation.n_rows(), relation.n_attrs(), c);
        if best.is_none_or(|(_, b)| bic < b) {
            best = Some((c, bic));
        }
    }
    Ok(best.expect("nonempty range").0)
}
