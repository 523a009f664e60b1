//! Vanilla fingerprinting: keyed pseudorandom streams, per-recipient codes,
//! insertion into sampled cells and majority-vote extraction.
//!
//! The PRF is SHA-256 with explicit domain-separation bytes:
//! `U_i(pk) = SHA-256(K || 0x00 || pk || i)[..8]` read big-endian, and the
//! code of recipient `n` is the bit stream of `SHA-256(K || 0x01 || n)`
//! (n as 8 big-endian bytes), MSB first. Codes longer than 256 bits append
//! blocks `SHA-256(K || 0x01 || n || j)` for `j = 1, 2, ...` (j as 4 big-endian bytes).

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};

use crate::error::{FpError, Result};
use crate::relation::{level_bit, set_level_bit, Relation};

/// Owner secret plus the parameters of one shared copy.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FingerprintKey {
    pub secret_key: Vec<u8>,
    pub sp_serial: u64,
    /// One record in `gamma_inv` is marked on average.
    pub gamma_inv: u64,
    /// Code length `L` in bits.
    pub length: usize,
    /// Bit level that carries the mark, 1 = LSB.
    pub bit_level: u32,
}

impl FingerprintKey {
    pub fn new(secret_key: impl Into<Vec<u8>>, sp_serial: u64, gamma_inv: u64, length: usize) -> Self {
        Self {
            secret_key: secret_key.into(),
            sp_serial,
            gamma_inv,
            length,
            bit_level: 1,
        }
    }

    pub fn with_bit_level(mut self, k: u32) -> Self {
        self.bit_level = k;
        self
    }

    pub fn with_serial(&self, sp_serial: u64) -> Self {
        Self {
            sp_serial,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.gamma_inv == 0 {
            return Err(FpError::InvalidParameter("gamma_inv must be >= 1".into()));
        }
        if self.length == 0 {
            return Err(FpError::InvalidParameter("fingerprint length must be >= 1".into()));
        }
        if self.bit_level == 0 || self.bit_level > 31 {
            return Err(FpError::InvalidParameter("bit level must be in 1..=31".into()));
        }
        Ok(())
    }

    pub fn code(&self) -> FingerprintCode {
        gen_fingerprint(&self.secret_key, self.sp_serial, self.length)
    }

    /// Marking decision for one record, or `None` if the record is not selected.
    pub fn select(&self, pk: &[u8], n_attrs: usize) -> Option<Selection> {
        if prf_u(&self.secret_key, pk, 1) % self.gamma_inv != 0 {
            return None;
        }
        Some(Selection {
            attribute: (prf_u(&self.secret_key, pk, 2) % n_attrs as u64) as usize,
            mask_bit: prf_u(&self.secret_key, pk, 3) & 1 == 1,
            index: (prf_u(&self.secret_key, pk, 4) % self.length as u64) as usize,
        })
    }
}

/// Pseudorandom choices for one selected record.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Selection {
    pub attribute: usize,
    pub mask_bit: bool,
    pub index: usize,
}

/// Stream `i` (1..=4) of the keyed pseudorandom generator.
pub fn prf_u(secret_key: &[u8], primary_key: &[u8], i: u8) -> u64 {
    debug_assert!((1..=4).contains(&i));
    let mut h = Sha256::new();
    h.update(secret_key);
    h.update([0x00]);
    h.update(primary_key);
    h.update([i]);
    let digest = h.finalize();
    u64::from_be_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}

/// A recipient's fingerprint code.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct FingerprintCode {
    bits: Vec<bool>,
}

impl FingerprintCode {
    pub fn from_bits(bits: Vec<bool>) -> Self {
        Self { bits }
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn bit(&self, l: usize) -> bool {
        self.bits[l]
    }

    pub fn complement(&self) -> Self {
        Self::from_bits(self.bits.iter().map(|b| !b).collect())
    }

    pub fn hamming(&self, other: &FingerprintCode) -> usize {
        self.bits.iter().zip(&other.bits).filter(|(a, b)| a != b).count()
    }

    /// Lowercase hex, most significant bit first; the last nibble is zero-padded.
    pub fn to_hex(&self) -> String {
        self.bits
            .chunks(4)
            .map(|nib| {
                let v = nib
                    .iter()
                    .enumerate()
                    .fold(0u32, |acc, (j, &b)| acc | (u32::from(b) << (3 - j)));
                char::from_digit(v, 16).expect("nibble")
            })
            .collect()
    }

    pub fn from_hex(hex: &str, length: usize) -> Result<Self> {
        if hex.len() != length.div_ceil(4) {
            return Err(FpError::ShapeError(format!(
                "{} hex digits cannot hold exactly {length} bits",
                hex.len()
            )));
        }
        let mut bits = Vec::with_capacity(hex.len() * 4);
        for c in hex.chars() {
            let v = c
                .to_digit(16)
                .ok_or_else(|| FpError::InvalidParameter(format!("invalid hex digit `{c}`")))?;
            bits.extend((0..4).map(|j| (v >> (3 - j)) & 1 == 1));
        }
        bits.truncate(length);
        Ok(Self { bits })
    }
}

impl fmt::Display for FingerprintCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

#[derive(Serialize, Deserialize)]
struct CodeRepr {
    length: usize,
    hex: String,
}

impl Serialize for FingerprintCode {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        CodeRepr {
            length: self.len(),
            hex: self.to_hex(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for FingerprintCode {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let repr = CodeRepr::deserialize(d)?;
        FingerprintCode::from_hex(&repr.hex, repr.length).map_err(serde::de::Error::custom)
    }
}

/// First `length` bits of the keyed hash of the recipient serial.
pub fn gen_fingerprint(secret_key: &[u8], sp_serial: u64, length: usize) -> FingerprintCode {
    let mut bits = Vec::with_capacity(length);
    let mut block = 0u32;
    while bits.len() < length {
        let mut h = Sha256::new();
        h.update(secret_key);
        h.update([0x01]);
        h.update(sp_serial.to_be_bytes());
        if block > 0 {
            h.update(block.to_be_bytes());
        }
        for byte in h.finalize() {
            for j in (0..8).rev() {
                if bits.len() == length {
                    break;
                }
                bits.push((byte >> j) & 1 == 1);
            }
        }
        block += 1;
    }
    FingerprintCode { bits }
}

/// One cell that carries a fingerprint bit.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MarkedPosition {
    pub row_index: usize,
    pub primary_key: String,
    pub attribute_index: usize,
    pub mask_bit: bool,
    pub fingerprint_index: usize,
    pub mark_bit: bool,
}

/// Output of insertion.
#[derive(Debug, Clone)]
pub struct Insertion {
    pub relation: Relation,
    pub marked: Vec<MarkedPosition>,
    /// Selected cells whose domain has no code carrying the requested bit.
    pub skipped: usize,
}

/// Embeds the code of `key` into a copy of `relation`.
pub fn insert(relation: &Relation, key: &FingerprintKey) -> Result<Insertion> {
    key.validate()?;
    let code = key.code();
    let n_attrs = relation.n_attrs();
    let mut out = relation.clone();
    let mut marked = Vec::new();
    let mut skipped = 0;
    if n_attrs == 0 {
        return Ok(Insertion {
            relation: out,
            marked,
            skipped,
        });
    }
    for (row, pk) in relation.keys().iter().enumerate() {
        let Some(sel) = key.select(&pk.to_bytes(), n_attrs) else {
            continue;
        };
        let mark_bit = sel.mask_bit ^ code.bit(sel.index);
        let old = relation.get(row, sel.attribute);
        match set_level_bit(old, key.bit_level, mark_bit, relation.cardinality(sel.attribute)) {
            Some(new) => {
                out.set_unchecked(row, sel.attribute, new);
                marked.push(MarkedPosition {
                    row_index: row,
                    primary_key: pk.to_string(),
                    attribute_index: sel.attribute,
                    mask_bit: sel.mask_bit,
                    fingerprint_index: sel.index,
                    mark_bit,
                });
            }
            None => skipped += 1,
        }
    }
    Ok(Insertion {
        relation: out,
        marked,
        skipped,
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Outcome {
    Code(FingerprintCode),
    NoneSuspected,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExtractionResult {
    pub outcome: Outcome,
    /// Per bit: (votes for 0, votes for 1).
    pub vote_counts: Vec<(u32, u32)>,
}

impl ExtractionResult {
    /// Majority bit per position, `None` where the vote is tied.
    pub fn recovered_bits(&self) -> Vec<Option<bool>> {
        self.vote_counts
            .iter()
            .map(|&(c0, c1)| match c0.cmp(&c1) {
                std::cmp::Ordering::Greater => Some(false),
                std::cmp::Ordering::Less => Some(true),
                std::cmp::Ordering::Equal => None,
            })
            .collect()
    }

    pub fn code(&self) -> Option<&FingerprintCode> {
        match &self.outcome {
            Outcome::Code(c) => Some(c),
            Outcome::NoneSuspected => None,
        }
    }
}

/// Recovers a code from a leaked copy by majority vote over selected records.
pub fn extract(leaked: &Relation, key: &FingerprintKey) -> Result<ExtractionResult> {
    key.validate()?;
    let mut counts = vec![(0u32, 0u32); key.length];
    let n_attrs = leaked.n_attrs();
    if n_attrs > 0 {
        for (row, pk) in leaked.keys().iter().enumerate() {
            let Some(sel) = key.select(&pk.to_bytes(), n_attrs) else {
                continue;
            };
            let observed = level_bit(leaked.get(row, sel.attribute), key.bit_level);
            let slot = &mut counts[sel.index];
            if observed ^ sel.mask_bit {
                slot.1 += 1;
            } else {
                slot.0 += 1;
            }
        }
    }
    let outcome = if counts.iter().any(|(c0, c1)| c0 == c1) {
        Outcome::NoneSuspected
    } else {
        Outcome::Code(FingerprintCode::from_bits(counts.iter().map(|(c0, c1)| c1 > c0).collect()))
    };
    Ok(ExtractionResult {
        outcome,
        vote_counts: counts,
    })
}

/// Ranks candidate recipients by bit agreement with the extracted code,
/// descending, ties by ascending serial.
pub fn detect_traitor(
    extracted: &FingerprintCode,
    candidates: &BTreeMap<u64, FingerprintCode>,
) -> Result<Vec<(u64, usize)>> {
    if candidates.is_empty() {
        return Err(FpError::EmptyCandidates);
    }
    let mut ranked = Vec::with_capacity(candidates.len());
    for (&serial, code) in candidates {
        if code.len() != extracted.len() {
            return Err(FpError::ShapeError(format!(
                "candidate {serial} has {} bits, extracted code has {}",
                code.len(),
                extracted.len()
            )));
        }
        ranked.push((serial, extracted.len() - extracted.hamming(code)));
    }
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    Ok(ranked)
}

/// Candidate codes for serials `serials` under one owner key.
pub fn candidate_codes(secret_key: &[u8], serials: impl IntoIterator<Item = u64>, length: usize) -> BTreeMap<u64, FingerprintCode> {
    serials
        .into_iter()
        .map(|n| (n, gen_fingerprint(secret_key, n, length)))
        .collect()
}
