//! Direct re-statements of the insertion, extraction, attack and defense
//! procedures on tiny relations, written independently of the library code
//! paths, and drivers comparing them against the library.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use fpguard::attacks::{atk_col, atk_row};
use fpguard::correlations::{joint_distributions, stat_relations, CommunityAssignment};
use fpguard::defenses::dfs_row;
use fpguard::fingerprint::{extract, insert, FingerprintKey, MarkedPosition};
use fpguard::relation::{AttributeSpec, PrimaryKey, Relation};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub const CASES: usize = 100;

/// Outcome of running one oracle over the randomized cases.
#[derive(Debug, Clone, Copy)]
pub struct Agreement {
    pub matched: usize,
    pub total: usize,
    /// Cases where the procedure changed something.
    pub nontrivial: usize,
}

impl Agreement {
    fn new() -> Self {
        Agreement { matched: 0, total: 0, nontrivial: 0 }
    }

    fn record(&mut self, matched: bool, nontrivial: bool) {
        self.total += 1;
        self.matched += usize::from(matched);
        self.nontrivial += usize::from(nontrivial);
    }

    pub fn exact(&self) -> bool {
        self.matched == self.total && self.nontrivial > self.total / 4
    }
}

struct Case {
    cards: Vec<u32>,
    rows: Vec<Vec<u32>>,
    keys: Vec<u64>,
}

impl Case {
    fn random(rng: &mut ChaCha8Rng) -> Self {
        let m = rng.gen_range(1..=8);
        let n = rng.gen_range(1..=3);
        let cards: Vec<u32> = (0..n).map(|_| rng.gen_range(1..=4)).collect();
        let rows = (0..m).map(|_| cards.iter().map(|&k| rng.gen_range(0..k)).collect()).collect();
        let mut keys = BTreeSet::new();
        while keys.len() < m {
            keys.insert(rng.gen_range(0..1000u64));
        }
        let mut keys: Vec<u64> = keys.into_iter().collect();
        // Keys in a shuffled order, so row index and key differ.
        for i in (1..keys.len()).rev() {
            keys.swap(i, rng.gen_range(0..=i));
        }
        Case { cards, rows, keys }
    }

    fn relation(&self, rows: &[Vec<u32>]) -> Relation {
        let schema = self
            .cards
            .iter()
            .enumerate()
            .map(|(i, &k)| AttributeSpec::categorical(format!("a{i}"), k))
            .collect();
        Relation::new(schema, self.keys.iter().map(|&k| PrimaryKey::Int(k)).collect(), rows.to_vec()).unwrap()
    }

    /// The same shape with every cell redrawn with probability one half.
    fn perturbed(&self, rng: &mut ChaCha8Rng) -> Vec<Vec<u32>> {
        self.rows
            .iter()
            .map(|r| {
                r.iter()
                    .zip(&self.cards)
                    .map(|(&v, &k)| if rng.gen_bool(0.5) { rng.gen_range(0..k) } else { v })
                    .collect()
            })
            .collect()
    }
}

fn rows_of(r: &Relation) -> Vec<Vec<u32>> {
    r.rows().map(|x| x.to_vec()).collect()
}

/// LSB flip; the top code of an odd domain steps down instead.
fn flip(v: u32, k: u32) -> u32 {
    if k <= 1 {
        v
    } else if (v ^ 1) < k {
        v ^ 1
    } else {
        v - 1
    }
}

// ---------------------------------------------------------------- PRF

pub fn u(key: &[u8], pk: u64, i: u8) -> u64 {
    let mut h = Sha256::new();
    h.update(key);
    h.update([0u8]);
    h.update(pk.to_be_bytes());
    h.update([i]);
    let d = h.finalize();
    let mut x = 0u64;
    for b in &d[..8] {
        x = (x << 8) | u64::from(*b);
    }
    x
}

pub fn code_bits(key: &[u8], serial: u64, length: usize) -> Vec<bool> {
    let mut bits = Vec::new();
    let mut block = 0u32;
    while bits.len() < length {
        let mut h = Sha256::new();
        h.update(key);
        h.update([1u8]);
        h.update(serial.to_be_bytes());
        if block > 0 {
            h.update(block.to_be_bytes());
        }
        for byte in h.finalize() {
            for j in 0..8 {
                bits.push(byte & (0x80 >> j) != 0);
            }
        }
        block += 1;
    }
    bits.truncate(length);
    bits
}

// ---------------------------------------------------------------- insertion and extraction

fn oracle_insert(case: &Case, secret: &[u8], serial: u64, gamma_inv: u64, length: usize) -> (Vec<Vec<u32>>, Vec<(usize, usize)>) {
    let f = code_bits(secret, serial, length);
    let n = case.cards.len() as u64;
    let mut rows = case.rows.clone();
    let mut marked = Vec::new();
    for (i, &pk) in case.keys.iter().enumerate() {
        if u(secret, pk, 1) % gamma_inv == 0 {
            let p = (u(secret, pk, 2) % n) as usize;
            let x = u(secret, pk, 3) % 2 == 1;
            let l = (u(secret, pk, 4) % length as u64) as usize;
            let m = x != f[l];
            let k = case.cards[p];
            let v = rows[i][p];
            let has = v % 2 == 1;
            if has == m {
                marked.push((i, p));
            } else if (v ^ 1) < k {
                rows[i][p] = v ^ 1;
                marked.push((i, p));
            } else if v >= 1 {
                // Setting the bit always has a lower odd code unless k = 1.
                rows[i][p] = v - 1;
                marked.push((i, p));
            }
        }
    }
    (rows, marked)
}

fn oracle_extract(case: &Case, rows: &[Vec<u32>], secret: &[u8], gamma_inv: u64, length: usize) -> Vec<[u32; 2]> {
    let n = case.cards.len() as u64;
    let mut count = vec![[0u32; 2]; length];
    for (i, &pk) in case.keys.iter().enumerate() {
        if u(secret, pk, 1) % gamma_inv == 0 {
            let p = (u(secret, pk, 2) % n) as usize;
            let m = rows[i][p] & 1;
            let x = (u(secret, pk, 3) % 2) as u32;
            let f = m ^ x;
            let l = (u(secret, pk, 4) % length as u64) as usize;
            count[l][f as usize] += 1;
        }
    }
    count
}

pub fn insertion_agreement(seed: u64) -> Agreement {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut agreement = Agreement::new();
    for _ in 0..CASES {
        let case = Case::random(&mut rng);
        let gamma_inv = rng.gen_range(1..=3);
        let length = rng.gen_range(1..=6);
        let serial = rng.gen_range(0..50);
        let key = FingerprintKey::new(b"oracle".to_vec(), serial, gamma_inv, length);
        let ins = insert(&case.relation(&case.rows), &key).unwrap();
        let (rows, marked) = oracle_insert(&case, b"oracle", serial, gamma_inv, length);
        let got: Vec<(usize, usize)> = ins.marked.iter().map(|m| (m.row_index, m.attribute_index)).collect();
        agreement.record(rows_of(&ins.relation) == rows && got == marked, rows != case.rows);
    }
    agreement
}

pub fn extraction_agreement(seed: u64) -> Agreement {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut agreement = Agreement::new();
    for _ in 0..CASES {
        let case = Case::random(&mut rng);
        let gamma_inv = rng.gen_range(1..=3);
        let length = rng.gen_range(1..=6);
        let leaked = case.perturbed(&mut rng);
        let key = FingerprintKey::new(b"oracle".to_vec(), 3, gamma_inv, length);
        let res = extract(&case.relation(&leaked), &key).unwrap();
        let expected = oracle_extract(&case, &leaked, b"oracle", gamma_inv, length);
        let got: Vec<[u32; 2]> = res.vote_counts.iter().map(|&(a, b)| [a, b]).collect();
        let tie = expected.iter().any(|c| c[0] == c[1]);
        let outcome = match res.code() {
            None => tie,
            Some(code) => {
                let bits: Vec<bool> = expected.iter().map(|c| c[1] > c[0]).collect();
                !tie && code.bits() == bits.as_slice()
            }
        };
        agreement.record(got == expected && outcome, expected.iter().any(|c| c[0] + c[1] > 0));
    }
    agreement
}

// ---------------------------------------------------------------- column-wise attack

fn joint_count(rows: &[Vec<u32>], p: usize, q: usize, a: u32, b: u32) -> usize {
    rows.iter().filter(|r| r[p] == a && r[q] == b).count()
}

fn oracle_atk_col(case: &Case, start: &[Vec<u32>], prior_rows: &[Vec<u32>], tau: f64, t: usize, seed: u64) -> Vec<Vec<u32>> {
    let m = start.len() as f64;
    let n = case.cards.len();
    let mut r = start.to_vec();
    let mut z: BTreeSet<(usize, usize)> = BTreeSet::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cnt = 1;
    while cnt <= t {
        // P as a multiset: one entry per (cell, ordered pair) hit.
        let mut p_set: Vec<(usize, usize)> = Vec::new();
        for p in 0..n {
            for q in 0..n {
                if p == q {
                    continue;
                }
                for a in 0..case.cards[p] {
                    for b in 0..case.cards[q] {
                        let prior = joint_count(prior_rows, p, q, a, b) as f64 / m;
                        let now = joint_count(&r, p, q, a, b) as f64 / m;
                        if (prior - now).abs() >= tau * (1.0 - 1e-9) {
                            for (i, row) in r.iter().enumerate() {
                                if row[p] == a && row[q] == b {
                                    p_set.push((i, p));
                                    p_set.push((i, q));
                                }
                            }
                        }
                    }
                }
            }
        }
        let mut a_sets: BTreeMap<usize, BTreeMap<usize, usize>> = BTreeMap::new();
        for (i, p) in p_set {
            *a_sets.entry(i).or_default().entry(p).or_default() += 1;
        }
        let mut h = Vec::new();
        for (i, a_i) in &a_sets {
            let best = *a_i.values().max().unwrap();
            let modes: Vec<usize> = a_i.iter().filter(|(_, &c)| c == best).map(|(&p, _)| p).collect();
            let pick = if modes.len() == 1 { modes[0] } else { modes[rng.gen_range(0..modes.len())] };
            h.push((*i, pick));
        }
        let fresh: Vec<(usize, usize)> = h.into_iter().filter(|c| !z.contains(c)).collect();
        if fresh.is_empty() {
            break;
        }
        for (i, p) in fresh {
            r[i][p] = flip(r[i][p], case.cards[p]);
            z.insert((i, p));
        }
        cnt += 1;
    }
    r
}

pub fn column_attack_agreement(seed: u64) -> Agreement {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut agreement = Agreement::new();
    for _ in 0..CASES {
        let case = Case::random(&mut rng);
        let copy = case.perturbed(&mut rng);
        let m = case.rows.len() as f64;
        let tau = [0.5, 1.0, 1.5, 2.0][rng.gen_range(0..4)] / m;
        let rounds = rng.gen_range(1..=3);
        let seed = rng.gen();
        let prior = joint_distributions(&case.relation(&case.rows));
        let (out, _) = atk_col(&case.relation(&copy), &prior, tau, rounds, seed).unwrap();
        let expected = oracle_atk_col(&case, &copy, &case.rows, tau, rounds, seed);
        agreement.record(rows_of(&out) == expected, expected != copy);
    }
    agreement
}

// ---------------------------------------------------------------- row-wise attack and defense

fn sim(a: &[u32], b: &[u32]) -> f64 {
    let d = a.iter().zip(b).filter(|(x, y)| x != y).count();
    (-(d as f64)).exp()
}

/// `sum_{j != i, j in comm} |s'_ij - s~_ij|` with both similarities recomputed from rows.
fn drift(prior: &[Vec<u32>], now: &[Vec<u32>], members: &[usize], i: usize) -> f64 {
    members
        .iter()
        .filter(|&&j| j != i)
        .map(|&j| (sim(&prior[i], &prior[j]) - sim(&now[i], &now[j])).abs())
        .sum()
}

fn random_comm(rng: &mut ChaCha8Rng, m: usize) -> CommunityAssignment {
    let c = rng.gen_range(1..=m.min(3));
    let mut membership: Vec<usize> = (0..m).map(|i| if i < c { i } else { rng.gen_range(0..c) }).collect();
    for i in (1..m).rev() {
        membership.swap(i, rng.gen_range(0..=i));
    }
    CommunityAssignment::new(c, membership).unwrap()
}

fn oracle_atk_row(case: &Case, copy: &[Vec<u32>], comm: &CommunityAssignment, tau: f64) -> Vec<Vec<u32>> {
    let mut out = copy.to_vec();
    for members in comm.members() {
        for &i in &members {
            if drift(&case.rows, copy, &members, i) >= tau * (1.0 - 1e-9) {
                for p in 0..case.cards.len() {
                    out[i][p] = flip(out[i][p], case.cards[p]);
                }
            }
        }
    }
    out
}

pub fn row_attack_agreement(seed: u64) -> Agreement {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut agreement = Agreement::new();
    for _ in 0..CASES {
        let case = Case::random(&mut rng);
        let copy = case.perturbed(&mut rng);
        let comm = random_comm(&mut rng, case.rows.len());
        let tau = rng.gen_range(0.05..1.5);
        let prior = stat_relations(&case.relation(&case.rows), &comm).unwrap();
        let (out, _) = atk_row(&case.relation(&copy), &prior, &comm, tau).unwrap();
        let expected = oracle_atk_row(&case, &copy, &comm, tau);
        agreement.record(rows_of(&out) == expected, expected != copy);
    }
    agreement
}

fn oracle_dfs_row(
    case: &Case,
    copy: &[Vec<u32>],
    comm: &CommunityAssignment,
    gamma: f64,
    fingerprinted: &BTreeSet<usize>,
) -> Vec<Vec<u32>> {
    let mut out = copy.to_vec();
    for members in comm.members() {
        let n_c = members.len();
        let mut e: Vec<(usize, f64)> = members
            .iter()
            .filter(|i| !fingerprinted.contains(i))
            .map(|&i| (i, drift(&case.rows, copy, &members, i)))
            .filter(|&(_, d)| d > 0.0)
            .collect();
        // Largest drift first; equal drift (to float accuracy) to the lower row.
        e.sort_by(|a, b| {
            if (a.1 - b.1).abs() <= 1e-9 * a.1.max(b.1) {
                a.0.cmp(&b.0)
            } else {
                b.1.partial_cmp(&a.1).unwrap()
            }
        });
        let budget = (n_c as f64 * gamma).ceil() as usize;
        let chosen: Vec<usize> = e.iter().take(budget).map(|x| x.0).collect();
        let mode: Vec<u32> = (0..case.cards.len())
            .map(|p| {
                let mut best = (0usize, 0u32);
                for a in 0..case.cards[p] {
                    let c = members.iter().filter(|&&i| copy[i][p] == a).count();
                    if c > best.0 {
                        best = (c, a);
                    }
                }
                best.1
            })
            .collect();
        for i in chosen {
            out[i] = mode.clone();
        }
    }
    out
}

pub fn row_defense_agreement(seed: u64) -> Agreement {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut agreement = Agreement::new();
    for _ in 0..CASES {
        let case = Case::random(&mut rng);
        let copy = case.perturbed(&mut rng);
        let comm = random_comm(&mut rng, case.rows.len());
        let gamma = [0.1, 0.25, 0.5][rng.gen_range(0..3)];
        let fingerprinted: BTreeSet<usize> = (0..case.rows.len()).filter(|_| rng.gen_bool(0.3)).collect();
        let marks: Vec<MarkedPosition> = fingerprinted
            .iter()
            .map(|&i| MarkedPosition {
                row_index: i,
                primary_key: case.keys[i].to_string(),
                attribute_index: 0,
                mask_bit: false,
                fingerprint_index: 0,
                mark_bit: false,
            })
            .collect();
        let prior = stat_relations(&case.relation(&case.rows), &comm).unwrap();
        let (out, _) = dfs_row(&case.relation(&copy), &prior, &comm, gamma, &marks).unwrap();
        let expected = oracle_dfs_row(&case, &copy, &comm, gamma, &fingerprinted);
        agreement.record(rows_of(&out) == expected, expected != copy);
    }
    agreement
}
