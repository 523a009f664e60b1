//! Seeded generator of census-like coded relations.
//!
//! Records are drawn from a mixture of latent profiles. Each profile fixes a
//! prototype value per attribute; a record copies its profile's prototype
//! and replaces each value, with probability `noise`, by a draw from a
//! skewed background marginal. This yields strong pairwise correlations and
//! tight record communities, the two structures the attacks exploit.
//! Optional couplings make one attribute a coarsened copy of another, the
//! way an education level and its numeric grade track each other.

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{FpError, Result};
use crate::relation::{AttributeSpec, PrimaryKey, Relation};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub rows: usize,
    /// Cardinality of every attribute, in schema order.
    pub cardinalities: Vec<u32>,
    /// Number of latent profiles.
    pub profiles: usize,
    /// Probability that a value is redrawn from the background marginal.
    pub noise: f64,
    /// Zipf exponent of the profile weights.
    pub profile_skew: f64,
    /// Zipf exponent of the background marginals.
    pub value_skew: f64,
    /// `[source, target]`: unless its noise draw fires, the target takes the
    /// source's code rescaled to its own cardinality.
    pub couplings: Vec<[usize; 2]>,
    /// Noise probability used for coupled targets instead of `noise`.
    pub coupling_noise: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            rows: 10_000,
            cardinalities: vec![8, 7, 8, 5, 6, 8, 4, 2, 8, 6],
            profiles: 40,
            noise: 0.7,
            profile_skew: 0.8,
            value_skew: 1.0,
            couplings: vec![[0, 3]],
            coupling_noise: 0.5,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_rows(mut self, rows: usize) -> Self {
        self.rows = rows;
        self
    }
}

fn zipf_weights(n: usize, s: f64) -> Vec<f64> {
    (1..=n).map(|r| (r as f64).powf(-s)).collect()
}

/// Generates a relation with keys `0..rows`.
pub fn generate(cfg: &SynthConfig) -> Result<Relation> {
    if cfg.cardinalities.is_empty() || cfg.cardinalities.contains(&0) {
        return Err(FpError::InvalidParameter("cardinalities must be nonempty and positive".into()));
    }
    if cfg.rows == 0 {
        return Err(FpError::InvalidParameter("at least one row required".into()));
    }
    if cfg.profiles == 0 {
        return Err(FpError::InvalidParameter("at least one profile required".into()));
    }
    if !(0.0..=1.0).contains(&cfg.noise) || !(0.0..=1.0).contains(&cfg.coupling_noise) {
        return Err(FpError::InvalidParameter("noise must be in [0, 1]".into()));
    }
    let n = cfg.cardinalities.len();
    let mut coupled_from = vec![None; n];
    for &[src, dst] in &cfg.couplings {
        if src >= n || dst >= n || src == dst || coupled_from[dst].is_some() {
            return Err(FpError::InvalidParameter(format!("bad coupling {src} -> {dst}")));
        }
        coupled_from[dst] = Some(src);
    }
    if cfg.couplings.iter().any(|&[src, _]| coupled_from[src].is_some()) {
        return Err(FpError::InvalidParameter("coupling chains are not supported".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    // Background marginals: Zipf over a random permutation of the codes.
    let background: Vec<(Vec<u32>, WeightedIndex<f64>)> = cfg
        .cardinalities
        .iter()
        .map(|&k| {
            let mut order: Vec<u32> = (0..k).collect();
            for i in (1..order.len()).rev() {
                order.swap(i, rng.gen_range(0..=i));
            }
            let w = WeightedIndex::new(zipf_weights(k as usize, cfg.value_skew)).expect("positive weights");
            (order, w)
        })
        .collect();
    let draw = |rng: &mut ChaCha8Rng, p: usize| {
        let (order, w) = &background[p];
        order[w.sample(rng)]
    };

    let prototypes: Vec<Vec<u32>> = (0..cfg.profiles)
        .map(|_| (0..n).map(|p| draw(&mut rng, p)).collect())
        .collect();
    let profile_dist = WeightedIndex::new(zipf_weights(cfg.profiles, cfg.profile_skew)).expect("positive weights");

    let mut cells = Vec::with_capacity(cfg.rows * n);
    for _ in 0..cfg.rows {
        let proto = &prototypes[profile_dist.sample(&mut rng)];
        let start = cells.len();
        for p in 0..n {
            let noise = if coupled_from[p].is_some() { cfg.coupling_noise } else { cfg.noise };
            let noisy = rng.gen_bool(noise);
            let v = match (noisy, coupled_from[p]) {
                (true, _) => draw(&mut rng, p),
                (false, None) => proto[p],
                // Filled in below, once the source value of this record is known.
                (false, Some(_)) => u32::MAX,
            };
            cells.push(v);
        }
        for p in 0..n {
            if let (Some(src), u32::MAX) = (coupled_from[p], cells[start + p]) {
                let v = u64::from(cells[start + src]) * u64::from(cfg.cardinalities[p]) / u64::from(cfg.cardinalities[src]);
                cells[start + p] = v as u32;
            }
        }
    }
    let schema = cfg
        .cardinalities
        .iter()
        .enumerate()
        .map(|(i, &k)| AttributeSpec::categorical(format!("attr{i}"), k))
        .collect();
    let keys = (0..cfg.rows as u64).map(PrimaryKey::Int).collect();
    Relation::from_cells(schema, keys, cells)
}
