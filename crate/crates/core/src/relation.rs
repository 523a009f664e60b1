//! Categorical relations: schema, CSV ingestion, integer encoding and
//! domain-safe bit manipulation of coded cells.
//!
//! Every attribute value is an integer code in `0..cardinality`. Numeric
//! columns are bucketed into equal-count quantile ranges, categorical columns
//! are coded by descending frequency, so neighbouring codes (which differ in
//! their least significant bit) are the "closest" instances.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{FpError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttributeKind {
    Numeric,
    Categorical,
}

/// One coded attribute: name, kind and number of distinct codes `k_p`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributeSpec {
    pub name: String,
    pub kind: AttributeKind,
    pub cardinality: u32,
}

impl AttributeSpec {
    pub fn new(name: impl Into<String>, kind: AttributeKind, cardinality: u32) -> Self {
        Self {
            name: name.into(),
            kind,
            cardinality,
        }
    }

    pub fn categorical(name: impl Into<String>, cardinality: u32) -> Self {
        Self::new(name, AttributeKind::Categorical, cardinality)
    }
}

/// Primary key of a record.
///
/// Integer keys hash as 8 big-endian bytes, text keys as their UTF-8 bytes.
/// This serialization decides which records are marked, so it is part of the
/// wire contract.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PrimaryKey {
    Int(u64),
    Text(String),
}

impl PrimaryKey {
    /// Parses a CSV token. Only canonical decimal integers (no sign, no
    /// leading zeros) become `Int`, so that printing a key reproduces the token.
    pub fn from_token(token: &str) -> Self {
        match token.parse::<u64>() {
            Ok(n) if n.to_string() == token => PrimaryKey::Int(n),
            _ => PrimaryKey::Text(token.to_string()),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        match self {
            PrimaryKey::Int(n) => n.to_be_bytes().to_vec(),
            PrimaryKey::Text(s) => s.as_bytes().to_vec(),
        }
    }
}

impl fmt::Display for PrimaryKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PrimaryKey::Int(n) => write!(f, "{n}"),
            PrimaryKey::Text(s) => f.write_str(s),
        }
    }
}

impl From<u64> for PrimaryKey {
    fn from(n: u64) -> Self {
        PrimaryKey::Int(n)
    }
}

/// An integer-coded relation. Cells are stored row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Relation {
    schema: Vec<AttributeSpec>,
    keys: Vec<PrimaryKey>,
    cells: Vec<u32>,
}

impl Relation {
    /// Builds a relation, checking the schema, key uniqueness, arity and code domains.
    pub fn new(schema: Vec<AttributeSpec>, keys: Vec<PrimaryKey>, rows: Vec<Vec<u32>>) -> Result<Self> {
        if keys.len() != rows.len() {
            return Err(FpError::ShapeError(format!(
                "{} keys for {} rows",
                keys.len(),
                rows.len()
            )));
        }
        let n_attrs = schema.len();
        let mut cells = Vec::with_capacity(rows.len() * n_attrs);
        for (i, row) in rows.into_iter().enumerate() {
            if row.len() != n_attrs {
                return Err(FpError::MalformedRow {
                    line: i + 2,
                    expected: n_attrs,
                    found: row.len(),
                });
            }
            cells.extend(row);
        }
        Self::from_cells(schema, keys, cells)
    }

    pub fn from_cells(schema: Vec<AttributeSpec>, keys: Vec<PrimaryKey>, cells: Vec<u32>) -> Result<Self> {
        validate_schema(&schema)?;
        let n_attrs = schema.len();
        if cells.len() != keys.len() * n_attrs {
            return Err(FpError::ShapeError(format!(
                "{} cells for {} rows of {} attributes",
                cells.len(),
                keys.len(),
                n_attrs
            )));
        }
        let mut seen = HashSet::with_capacity(keys.len());
        for key in &keys {
            if !seen.insert(key) {
                return Err(FpError::DuplicateKey(key.to_string()));
            }
        }
        if n_attrs > 0 {
            for row in cells.chunks(n_attrs) {
                for (spec, &code) in schema.iter().zip(row) {
                    if code >= spec.cardinality {
                        return Err(FpError::CodeOutOfDomain {
                            attribute: spec.name.clone(),
                            code,
                            cardinality: spec.cardinality,
                        });
                    }
                }
            }
        }
        Ok(Self { schema, keys, cells })
    }

    pub fn schema(&self) -> &[AttributeSpec] {
        &self.schema
    }

    pub fn keys(&self) -> &[PrimaryKey] {
        &self.keys
    }

    pub fn n_rows(&self) -> usize {
        self.keys.len()
    }

    pub fn n_attrs(&self) -> usize {
        self.schema.len()
    }

    pub fn n_cells(&self) -> usize {
        self.cells.len()
    }

    pub fn cardinality(&self, attr: usize) -> u32 {
        self.schema[attr].cardinality
    }

    pub fn cardinalities(&self) -> Vec<u32> {
        self.schema.iter().map(|a| a.cardinality).collect()
    }

    pub fn attribute_index(&self, name: &str) -> Option<usize> {
        self.schema.iter().position(|a| a.name == name)
    }

    #[inline]
    pub fn get(&self, row: usize, attr: usize) -> u32 {
        self.cells[row * self.schema.len() + attr]
    }

    #[inline]
    pub fn row(&self, row: usize) -> &[u32] {
        let n = self.schema.len();
        &self.cells[row * n..(row + 1) * n]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[u32]> {
        self.cells.chunks(self.schema.len().max(1)).take(self.keys.len())
    }

    /// Column `attr` as a vector of codes.
    pub fn column(&self, attr: usize) -> Vec<u32> {
        (0..self.n_rows()).map(|i| self.get(i, attr)).collect()
    }

    pub fn set(&mut self, row: usize, attr: usize, code: u32) -> Result<()> {
        let spec = &self.schema[attr];
        if code >= spec.cardinality {
            return Err(FpError::CodeOutOfDomain {
                attribute: spec.name.clone(),
                code,
                cardinality: spec.cardinality,
            });
        }
        self.set_unchecked(row, attr, code);
        Ok(())
    }

    #[inline]
    pub(crate) fn set_unchecked(&mut self, row: usize, attr: usize, code: u32) {
        debug_assert!(code < self.schema[attr].cardinality);
        let n = self.schema.len();
        self.cells[row * n + attr] = code;
    }

    /// Row index of every primary key.
    pub fn key_index(&self) -> HashMap<&PrimaryKey, usize> {
        self.keys.iter().enumerate().map(|(i, k)| (k, i)).collect()
    }

    /// Positions `(row, attribute)` where `self` and `other` hold different codes.
    pub fn diff_positions(&self, other: &Relation) -> Result<Vec<(usize, usize)>> {
        self.check_same_shape(other)?;
        let n = self.n_attrs();
        Ok(self
            .cells
            .iter()
            .zip(&other.cells)
            .enumerate()
            .filter(|(_, (a, b))| a != b)
            .map(|(idx, _)| (idx / n, idx % n))
            .collect())
    }

    pub fn check_same_shape(&self, other: &Relation) -> Result<()> {
        if self.schema != other.schema {
            return Err(FpError::ShapeError("schemas differ".into()));
        }
        if self.keys != other.keys {
            return Err(FpError::ShapeError("primary keys differ or are reordered".into()));
        }
        Ok(())
    }

    /// Serializes the coded relation as CSV with a leading key column.
    pub fn to_csv(&self, key_column: &str) -> String {
        let mut out = String::with_capacity(self.cells.len() * 3);
        out.push_str(key_column);
        for spec in &self.schema {
            out.push(',');
            out.push_str(&spec.name);
        }
        out.push('\n');
        for (key, row) in self.keys.iter().zip(self.rows()) {
            out.push_str(&key.to_string());
            for code in row {
                out.push(',');
                out.push_str(&code.to_string());
            }
            out.push('\n');
        }
        out
    }

    /// Parses an already-coded CSV. Every attribute in `schema` must declare its cardinality.
    pub fn from_csv(text: &str, schema: &SchemaFile) -> Result<Self> {
        let raw = parse_csv(text, schema)?;
        let specs = schema.coded_specs()?;
        let mut cells = Vec::with_capacity(raw.rows.len() * specs.len());
        for (line, row) in raw.rows.iter().enumerate() {
            for (spec, token) in specs.iter().zip(row) {
                let code: u32 = token.trim().parse().map_err(|_| FpError::EncodeError {
                    attribute: spec.name.clone(),
                    value: token.clone(),
                })?;
                if code >= spec.cardinality {
                    return Err(FpError::CodeOutOfDomain {
                        attribute: spec.name.clone(),
                        code,
                        cardinality: spec.cardinality,
                    });
                }
                cells.push(code);
            }
            debug_assert_eq!(cells.len(), (line + 1) * specs.len());
        }
        let keys = raw.keys.iter().map(|k| PrimaryKey::from_token(k)).collect();
        Self::from_cells(specs, keys, cells)
    }
}

fn validate_schema(schema: &[AttributeSpec]) -> Result<()> {
    let mut names = HashSet::new();
    for spec in schema {
        if spec.cardinality == 0 {
            return Err(FpError::SchemaMismatch(format!(
                "attribute `{}` has cardinality 0",
                spec.name
            )));
        }
        if !names.insert(spec.name.as_str()) {
            return Err(FpError::SchemaMismatch(format!(
                "attribute name `{}` repeated",
                spec.name
            )));
        }
    }
    Ok(())
}

/// Attribute declaration as found in a schema file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributeDecl {
    pub name: String,
    pub kind: AttributeKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub buckets: Option<usize>,
    /// Present once the column is coded.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cardinality: Option<u32>,
}

/// Schema file: `{"primary_key": "id", "attributes": [{"name", "kind", "buckets"?, "cardinality"?}]}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SchemaFile {
    pub primary_key: String,
    pub attributes: Vec<AttributeDecl>,
}

impl SchemaFile {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("schema serializes")
    }

    /// The coded attribute specs; fails if some attribute has no cardinality yet.
    pub fn coded_specs(&self) -> Result<Vec<AttributeSpec>> {
        self.attributes
            .iter()
            .map(|a| {
                a.cardinality
                    .map(|c| AttributeSpec::new(a.name.clone(), a.kind, c))
                    .ok_or_else(|| {
                        FpError::SchemaMismatch(format!("attribute `{}` has no cardinality", a.name))
                    })
            })
            .collect()
    }

    /// Schema describing a coded relation.
    pub fn for_relation(primary_key: &str, relation: &Relation) -> Self {
        SchemaFile {
            primary_key: primary_key.to_string(),
            attributes: relation
                .schema()
                .iter()
                .map(|s| AttributeDecl {
                    name: s.name.clone(),
                    kind: s.kind,
                    buckets: None,
                    cardinality: Some(s.cardinality),
                })
                .collect(),
        }
    }
}

/// A relation whose values are still raw text tokens.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawRelation {
    pub key_column: String,
    pub attributes: Vec<AttributeDecl>,
    pub keys: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl RawRelation {
    pub fn column(&self, attr: usize) -> impl Iterator<Item = &str> {
        self.rows.iter().map(move |r| r[attr].as_str())
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        out.push_str(&self.key_column);
        for a in &self.attributes {
            out.push(',');
            out.push_str(&a.name);
        }
        out.push('\n');
        for (key, row) in self.keys.iter().zip(&self.rows) {
            out.push_str(key);
            for v in row {
                out.push(',');
                out.push_str(v);
            }
            out.push('\n');
        }
        out
    }
}

/// Parses a header-first CSV into raw tokens, in schema attribute order.
pub fn parse_csv(text: &str, schema: &SchemaFile) -> Result<RawRelation> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(text.as_bytes());
    let mut records = reader.records();
    let header = match records.next() {
        Some(h) => h?,
        None => return Err(FpError::SchemaMismatch("missing header line".into())),
    };
    let position = |name: &str| -> Result<usize> {
        header
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| FpError::SchemaMismatch(format!("missing column `{name}`")))
    };
    let key_col = position(&schema.primary_key)?;
    let attr_cols = schema
        .attributes
        .iter()
        .map(|a| position(&a.name))
        .collect::<Result<Vec<_>>>()?;

    let mut keys = Vec::new();
    let mut rows = Vec::new();
    let mut seen = HashSet::new();
    for (idx, record) in records.enumerate() {
        let record = record?;
        let line = idx + 2;
        if record.len() == 1 && record.get(0).is_some_and(|f| f.trim().is_empty()) {
            continue;
        }
        if record.len() != header.len() {
            return Err(FpError::MalformedRow {
                line,
                expected: header.len(),
                found: record.len(),
            });
        }
        let key = record[key_col].trim().to_string();
        if !seen.insert(PrimaryKey::from_token(&key)) {
            return Err(FpError::DuplicateKey(key));
        }
        keys.push(key);
        rows.push(attr_cols.iter().map(|&c| record[c].trim().to_string()).collect());
    }
    Ok(RawRelation {
        key_column: schema.primary_key.clone(),
        attributes: schema.attributes.clone(),
        keys,
        rows,
    })
}

/// How one attribute's raw values map to codes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum AttributeEncoding {
    /// Code `c` covers `[boundaries[c-1], boundaries[c])`; values below the
    /// first boundary are code 0, values at or above the last are the top code.
    Numeric { name: String, boundaries: Vec<f64> },
    /// Code `c` is `instances[c]`.
    Categorical { name: String, instances: Vec<String> },
}

impl AttributeEncoding {
    pub fn name(&self) -> &str {
        match self {
            AttributeEncoding::Numeric { name, .. } | AttributeEncoding::Categorical { name, .. } => name,
        }
    }

    pub fn cardinality(&self) -> u32 {
        match self {
            AttributeEncoding::Numeric { boundaries, .. } => boundaries.len() as u32 + 1,
            AttributeEncoding::Categorical { instances, .. } => instances.len() as u32,
        }
    }

    pub fn kind(&self) -> AttributeKind {
        match self {
            AttributeEncoding::Numeric { .. } => AttributeKind::Numeric,
            AttributeEncoding::Categorical { .. } => AttributeKind::Categorical,
        }
    }

    fn encode(&self, token: &str) -> Result<u32> {
        match self {
            AttributeEncoding::Numeric { name, boundaries } => {
                let v = parse_number(name, token)?;
                Ok(boundaries.partition_point(|b| *b <= v) as u32)
            }
            AttributeEncoding::Categorical { name, instances } => instances
                .iter()
                .position(|i| i == token)
                .map(|c| c as u32)
                .ok_or_else(|| FpError::UnknownInstance {
                    attribute: name.clone(),
                    value: token.to_string(),
                }),
        }
    }

    /// Half-open value range `[lo, hi)` of a numeric bucket.
    pub fn bucket_range(&self, code: u32) -> Option<(f64, f64)> {
        match self {
            AttributeEncoding::Numeric { boundaries, .. } => {
                let c = code as usize;
                if c > boundaries.len() {
                    return None;
                }
                let lo = if c == 0 { f64::NEG_INFINITY } else { boundaries[c - 1] };
                let hi = boundaries.get(c).copied().unwrap_or(f64::INFINITY);
                Some((lo, hi))
            }
            AttributeEncoding::Categorical { .. } => None,
        }
    }

    /// Raw instance for a categorical code.
    pub fn instance(&self, code: u32) -> Option<&str> {
        match self {
            AttributeEncoding::Categorical { instances, .. } => instances.get(code as usize).map(String::as_str),
            AttributeEncoding::Numeric { .. } => None,
        }
    }
}

/// Fitted encoding for every attribute of a schema, serializable to JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncodingMap {
    pub attributes: Vec<AttributeEncoding>,
}

impl EncodingMap {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("encoding map serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn specs(&self) -> Vec<AttributeSpec> {
        self.attributes
            .iter()
            .map(|a| AttributeSpec::new(a.name(), a.kind(), a.cardinality()))
            .collect()
    }
}

/// Supplies the code order of a categorical column. Codes are the positions in
/// the returned list, which must contain every distinct instance exactly once.
pub trait CategoricalCoder {
    fn order(&self, column: &[&str]) -> Vec<String>;
}

/// Orders instances by descending frequency, ties broken lexicographically.
#[derive(Debug, Clone, Copy, Default)]
pub struct FrequencyOrder;

impl CategoricalCoder for FrequencyOrder {
    fn order(&self, column: &[&str]) -> Vec<String> {
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for v in column {
            *counts.entry(v).or_default() += 1;
        }
        let mut ordered: Vec<(&str, usize)> = counts.into_iter().collect();
        ordered.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        ordered.into_iter().map(|(v, _)| v.to_string()).collect()
    }
}

/// Bucket counts taken from the `buckets` fields of the declarations.
pub fn buckets_from_decls(decls: &[AttributeDecl]) -> BTreeMap<String, usize> {
    decls
        .iter()
        .filter_map(|d| d.buckets.map(|b| (d.name.clone(), b)))
        .collect()
}

pub fn fit_encoding(raw: &RawRelation, buckets_per_numeric: &BTreeMap<String, usize>) -> Result<EncodingMap> {
    fit_encoding_with(raw, buckets_per_numeric, &FrequencyOrder)
}

/// Fits an encoding with a caller-supplied categorical coder.
pub fn fit_encoding_with(
    raw: &RawRelation,
    buckets_per_numeric: &BTreeMap<String, usize>,
    coder: &dyn CategoricalCoder,
) -> Result<EncodingMap> {
    let mut attributes = Vec::with_capacity(raw.attributes.len());
    for (idx, decl) in raw.attributes.iter().enumerate() {
        let column: Vec<&str> = raw.column(idx).collect();
        let enc = match decl.kind {
            AttributeKind::Numeric => {
                let buckets = buckets_per_numeric
                    .get(&decl.name)
                    .copied()
                    .or(decl.buckets)
                    .unwrap_or(1);
                if buckets == 0 {
                    return Err(FpError::InvalidParameter(format!(
                        "attribute `{}` needs at least one bucket",
                        decl.name
                    )));
                }
                let mut values = column
                    .iter()
                    .map(|t| parse_number(&decl.name, t))
                    .collect::<Result<Vec<f64>>>()?;
                values.sort_by(f64::total_cmp);
                AttributeEncoding::Numeric {
                    name: decl.name.clone(),
                    boundaries: quantile_boundaries(&values, buckets),
                }
            }
            AttributeKind::Categorical => {
                let instances = coder.order(&column);
                let distinct: HashSet<&str> = column.iter().copied().collect();
                let listed: HashSet<&str> = instances.iter().map(String::as_str).collect();
                if listed.len() != instances.len() || listed != distinct {
                    return Err(FpError::SchemaMismatch(format!(
                        "categorical coder for `{}` must list every instance exactly once",
                        decl.name
                    )));
                }
                if instances.is_empty() {
                    // Empty column: keep a single placeholder code so k_p >= 1.
                    AttributeEncoding::Categorical {
                        name: decl.name.clone(),
                        instances: vec![String::new()],
                    }
                } else {
                    AttributeEncoding::Categorical {
                        name: decl.name.clone(),
                        instances,
                    }
                }
            }
        };
        attributes.push(enc);
    }
    Ok(EncodingMap { attributes })
}

/// Equal-count split points over sorted values. A split never separates
/// equal values; it moves to the nearest change of value instead.
fn quantile_boundaries(sorted: &[f64], buckets: usize) -> Vec<f64> {
    let n = sorted.len();
    let mut boundaries: Vec<f64> = Vec::new();
    for b in 1..buckets {
        let target = b * n / buckets;
        if target == 0 || target >= n {
            continue;
        }
        let mut lo = target;
        while lo > 0 && sorted[lo - 1] == sorted[lo] {
            lo -= 1;
        }
        let mut hi = target;
        while hi < n && sorted[hi - 1] == sorted[hi] {
            hi += 1;
        }
        let idx = if lo > 0 && (hi >= n || target - lo < hi - target) { lo } else { hi };
        if idx == 0 || idx >= n {
            continue;
        }
        let cut = (sorted[idx - 1] + sorted[idx]) / 2.0;
        if boundaries.last().is_none_or(|last| cut > *last) {
            boundaries.push(cut);
        }
    }
    boundaries
}

fn parse_number(attribute: &str, token: &str) -> Result<f64> {
    token
        .trim()
        .parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| FpError::EncodeError {
            attribute: attribute.to_string(),
            value: token.to_string(),
        })
}

pub fn apply_encoding(raw: &RawRelation, map: &EncodingMap) -> Result<Relation> {
    if map.attributes.len() != raw.attributes.len()
        || map
            .attributes
            .iter()
            .zip(&raw.attributes)
            .any(|(e, d)| e.name() != d.name || e.kind() != d.kind)
    {
        return Err(FpError::SchemaMismatch("encoding map does not match relation schema".into()));
    }
    let mut cells = Vec::with_capacity(raw.rows.len() * map.attributes.len());
    for row in &raw.rows {
        for (enc, token) in map.attributes.iter().zip(row) {
            cells.push(enc.encode(token)?);
        }
    }
    let keys = raw.keys.iter().map(|k| PrimaryKey::from_token(k)).collect();
    Relation::from_cells(map.specs(), keys, cells)
}

/// Flips the least significant bit, falling back to `value - 1` when
/// `value ^ 1` leaves the domain (odd `k_p`, top code).
pub fn flip_lsb(value: u32, cardinality: u32) -> Result<u32> {
    if cardinality <= 1 {
        return Err(FpError::NoFlipPossible);
    }
    let flipped = value ^ 1;
    Ok(if flipped < cardinality { flipped } else { value - 1 })
}

/// Flips bit `k - 1`; if that leaves the domain the bit is cleared instead.
/// Returns the new code and whether it differs from `value`.
pub fn flip_lksb(value: u32, k: u32, cardinality: u32) -> Result<(u32, bool)> {
    if cardinality <= 1 {
        return Err(FpError::NoFlipPossible);
    }
    if k == 0 || k > 31 {
        return Err(FpError::InvalidParameter(format!("bit level {k} out of range")));
    }
    let bit = 1u32 << (k - 1);
    let flipped = value ^ bit;
    if flipped < cardinality {
        Ok((flipped, true))
    } else {
        let cleared = value & !bit;
        Ok((cleared, cleared != value))
    }
}

/// Value of bit `k - 1` of a code.
#[inline]
pub fn level_bit(value: u32, k: u32) -> bool {
    (value >> (k - 1)) & 1 == 1
}

/// Smallest in-domain change of `value` whose bit `k - 1` equals `bit`.
///
/// If toggling the bit leaves the domain, the largest code below the
/// cardinality carrying the requested bit is used (for `k = 1` that is
/// `value - 1`). Returns `None` when no code in the domain carries the bit.
pub fn set_level_bit(value: u32, k: u32, bit: bool, cardinality: u32) -> Option<u32> {
    if level_bit(value, k) == bit {
        return Some(value);
    }
    let mask = 1u32 << (k - 1);
    let toggled = value ^ mask;
    if toggled < cardinality {
        return Some(toggled);
    }
    // Only reachable when setting the bit: clearing always lowers the code.
    (0..cardinality).rev().find(|c| level_bit(*c, k) == bit)
}
