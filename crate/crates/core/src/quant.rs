//! Uniform symmetric activation quantizer with one scale per layer, and the
//! margin-based safety condition for it.
//!
//! `step = 2R / (2^b − 1)`; codes are `round(x / step)` with ties away from
//! zero and are not clamped, so inputs in `[−R, R]` land in
//! `[−2^(b−1), 2^(b−1)]`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::collision::{code_collisions, CollisionReport};
use crate::error::{Error, Result};
use crate::metrics::Points;

/// Largest bitwidth searched by [`critical_bitwidth`].
pub const MAX_BITS: u32 = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantSpec {
    pub bits: u32,
    pub range: f64,
    pub step: f64,
}

impl QuantSpec {
    pub fn new(range: f64, bits: u32) -> Result<Self> {
        Ok(Self {
            bits,
            range,
            step: step_size(range, bits)?,
        })
    }

    pub fn for_cloud(points: &Points, bits: u32) -> Result<Self> {
        Self::new(dynamic_range(points), bits)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedCloud {
    pub codes: Vec<i64>,
    pub values: Points,
    pub spec: QuantSpec,
}

impl QuantizedCloud {
    pub fn collisions(&self) -> CollisionReport {
        code_collisions(&self.codes, self.values.dim())
    }
}

/// Largest absolute coordinate.
pub fn dynamic_range(points: &Points) -> f64 {
    points.data().iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

fn levels(bits: u32) -> f64 {
    // exact for bits ≤ 53, monotone beyond
    2f64.powi(bits as i32) - 1.0
}

pub fn step_size(range: f64, bits: u32) -> Result<f64> {
    if bits == 0 || bits > MAX_BITS {
        return Err(Error::InvalidArgument(format!(
            "bitwidth must be in 1..={MAX_BITS}, got {bits}"
        )));
    }
    if !(range.is_finite() && range >= 0.0) {
        return Err(Error::InvalidArgument(format!("invalid range {range}")));
    }
    if range == 0.0 {
        return Err(Error::DegenerateRange);
    }
    Ok(2.0 * range / levels(bits))
}

/// Nearest level, ties away from zero. `x / step` is itself rounded, so a
/// near-tie can land on the wrong side; the singly-rounded reconstruction
/// error `|k·step − x|` settles it.
pub fn quantize_value(x: f64, step: f64) -> i64 {
    let c = (x / step).round() as i64;
    let err = |k: i64| (k as f64).mul_add(step, -x).abs();
    if err(c) <= step / 2.0 {
        return c;
    }
    [c - 1, c + 1]
        .into_iter()
        .filter(|&k| err(k) < err(c))
        .min_by(|&a, &b| err(a).total_cmp(&err(b)))
        .unwrap_or(c)
}

pub fn quantize_cloud(points: &Points, spec: &QuantSpec) -> Result<QuantizedCloud> {
    let d = points.dim();
    if let Some(k) = points.data().iter().position(|v| v.abs() > spec.range) {
        return Err(Error::OutOfRange {
            row: k / d,
            col: k % d,
            value: points.data()[k],
            range: spec.range,
        });
    }
    let codes: Vec<i64> = points
        .data()
        .par_iter()
        .map(|&x| quantize_value(x, spec.step))
        .collect();
    let values = codes.par_iter().map(|&c| c as f64 * spec.step).collect();
    Ok(QuantizedCloud {
        values: Points::new(points.len(), d, values)?,
        codes,
        spec: *spec,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Verdict {
    /// Quantization provably keeps the set collision-free.
    Safe,
    /// The sufficient condition fails; collisions are possible, not certain.
    Unproven,
}

/// `step < margin / √dim`.
pub fn safety_check(margin: f64, dim: usize, step: f64) -> Verdict {
    if step < margin / (dim as f64).sqrt() {
        Verdict::Safe
    } else {
        Verdict::Unproven
    }
}

/// Smallest bitwidth whose step passes [`safety_check`].
pub fn critical_bitwidth(margin: f64, dim: usize, range: f64) -> Result<u32> {
    if margin == 0.0 {
        return Err(Error::NoSafeBitwidth);
    }
    if !(margin > 0.0) || dim == 0 || !(range > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "critical bitwidth needs margin > 0, dim ≥ 1, range > 0 (got {margin}, {dim}, {range})"
        )));
    }
    (1..=MAX_BITS)
        .find(|&b| safety_check(margin, dim, 2.0 * range / levels(b)) == Verdict::Safe)
        .ok_or_else(|| Error::InvalidArgument(format!("no bitwidth ≤ {MAX_BITS} is safe")))
}
