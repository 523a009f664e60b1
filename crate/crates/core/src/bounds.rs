//! False-hit bounds of the vanilla scheme.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SchemeBounds {
    pub n_sp: u64,
    pub length: u32,
    pub misattribution: f64,
    pub misdiagnosis: f64,
}

impl SchemeBounds {
    pub fn new(n_sp: u64, length: u32) -> Self {
        Self {
            n_sp,
            length,
            misattribution: misattribution_bound(n_sp, length),
            misdiagnosis: misdiagnosis_bound(n_sp, length),
        }
    }
}

fn pow2_neg(length: u32) -> f64 {
    // 2^-L underflows to zero past the subnormal range, which is the correct limit.
    (-(f64::from(length))).exp2()
}

/// Probability bound that an innocent SP is accused: `(n_sp - 1) / 2^L`.
pub fn misattribution_bound(n_sp: u64, length: u32) -> f64 {
    n_sp.saturating_sub(1) as f64 * pow2_neg(length)
}

/// Probability bound that an unmarked copy is attributed to some SP: `n_sp / 2^L`.
pub fn misdiagnosis_bound(n_sp: u64, length: u32) -> f64 {
    n_sp as f64 * pow2_neg(length)
}
