//! Exact collision counting and near-collision sweeps.

use std::collections::HashMap;
use std::hash::Hash;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{sq_dist, NnDistances, PairSample, Points};
use crate::store::Matrix;

/// Largest N for which exact sweeps enumerate all pairs by default.
pub const DEFAULT_EXACT_MAX_ROWS: u64 = 20_000;

pub fn default_pair_budget() -> u64 {
    DEFAULT_EXACT_MAX_ROWS * (DEFAULT_EXACT_MAX_ROWS - 1) / 2
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CollisionReport {
    pub colliding_pairs: u64,
    /// Row groups sharing one vector, ordered by their first index.
    pub groups: Vec<Vec<usize>>,
}

/// Group rows by an exact key and count unordered colliding pairs.
pub fn group_rows<K, I>(rows: I) -> CollisionReport
where
    K: Hash + Eq,
    I: IntoIterator<Item = K>,
{
    let mut first: HashMap<K, usize> = HashMap::new();
    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut slot_of: HashMap<usize, usize> = HashMap::new();
    for (i, key) in rows.into_iter().enumerate() {
        match first.get(&key) {
            Some(&head) => {
                let slot = *slot_of.entry(head).or_insert_with(|| {
                    groups.push(vec![head]);
                    groups.len() - 1
                });
                groups[slot].push(i);
            }
            None => {
                first.insert(key, i);
            }
        }
    }
    groups.sort_by_key(|g| g[0]);
    let colliding_pairs = groups
        .iter()
        .map(|g| (g.len() as u64) * (g.len() as u64 - 1) / 2)
        .sum();
    CollisionReport {
        colliding_pairs,
        groups,
    }
}

/// Bit pattern with `-0.0` folded onto `+0.0`.
#[inline]
fn canonical_f32(v: f32) -> u32 {
    if v == 0.0 {
        0
    } else {
        v.to_bits()
    }
}

#[inline]
fn canonical_f64(v: f64) -> u64 {
    if v == 0.0 {
        0
    } else {
        v.to_bits()
    }
}

/// Bitwise collisions between binary32 rows.
pub fn exact_collisions(cloud: &Matrix) -> CollisionReport {
    let d = cloud.cols();
    let keys: Vec<u32> = cloud.data().iter().map(|&v| canonical_f32(v)).collect();
    group_rows(keys.chunks_exact(d))
}

/// Bitwise collisions between binary64 rows.
pub fn exact_collisions_points(points: &Points) -> CollisionReport {
    let d = points.dim();
    let keys: Vec<u64> = points.data().iter().map(|&v| canonical_f64(v)).collect();
    group_rows(keys.chunks_exact(d))
}

/// Collisions between integer code rows (quantized states).
pub fn code_collisions(codes: &[i64], d: usize) -> CollisionReport {
    group_rows(codes.chunks_exact(d))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepMode {
    Exact,
    Sampled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NearCollisionSweep {
    pub epsilons: Vec<f64>,
    pub fractions: Vec<f64>,
    pub counts: Vec<u64>,
    pub mode: SweepMode,
    pub pairs_considered: u64,
}

fn check_epsilons(eps: &[f64]) -> Result<()> {
    if eps.is_empty() {
        return Err(Error::InvalidArgument("at least one epsilon required".into()));
    }
    if eps.iter().any(|e| !(e.is_finite() && *e > 0.0)) || eps.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidArgument(
            "epsilons must be positive and strictly ascending".into(),
        ));
    }
    Ok(())
}

fn bump(counts: &mut [u64], eps: &[f64], dist: f64) {
    // eps ascending: every tolerance from the first that admits `dist` counts it
    if let Some(k) = eps.iter().position(|&e| dist <= e) {
        for c in &mut counts[k..] {
            *c += 1;
        }
    }
}

fn finish(eps: &[f64], counts: Vec<u64>, mode: SweepMode, considered: u64) -> NearCollisionSweep {
    let fractions = counts
        .iter()
        .map(|&c| if considered == 0 { 0.0 } else { c as f64 / considered as f64 })
        .collect();
    NearCollisionSweep {
        epsilons: eps.to_vec(),
        fractions,
        counts,
        mode,
        pairs_considered: considered,
    }
}

/// Fraction of pairs within each tolerance.
///
/// `Exact` enumerates all `N(N−1)/2` pairs and fails when that exceeds
/// `pair_budget`; `Sampled` uses the given pair sample.
pub fn near_collision_sweep(
    points: &Points,
    epsilons: &[f64],
    mode: SweepMode,
    sample: Option<&PairSample>,
    pair_budget: u64,
) -> Result<NearCollisionSweep> {
    sweep_impl(points, epsilons, mode, sample, pair_budget, None)
}

/// Exact sweep that skips rows whose nearest neighbor already lies beyond the
/// largest tolerance. Counts equal those of the unfiltered exact sweep.
pub fn near_collision_sweep_with_nn(
    points: &Points,
    epsilons: &[f64],
    nn: &NnDistances,
    pair_budget: u64,
) -> Result<NearCollisionSweep> {
    sweep_impl(points, epsilons, SweepMode::Exact, None, pair_budget, Some(nn))
}

fn sweep_impl(
    points: &Points,
    epsilons: &[f64],
    mode: SweepMode,
    sample: Option<&PairSample>,
    pair_budget: u64,
    nn: Option<&NnDistances>,
) -> Result<NearCollisionSweep> {
    check_epsilons(epsilons)?;
    let n = points.len();
    let k = epsilons.len();
    match mode {
        SweepMode::Exact => {
            let total = n as u64 * (n as u64).saturating_sub(1) / 2;
            if total > pair_budget {
                return Err(Error::OverBudget {
                    pairs: total,
                    budget: pair_budget,
                });
            }
            let max_eps = epsilons[k - 1];
            let near = |i: usize| nn.is_none_or(|nn| nn.dist[i] <= max_eps);
            let counts = (0..n)
                .into_par_iter()
                .filter(|&i| near(i))
                .map(|i| {
                    let mut c = vec![0u64; k];
                    for j in i + 1..n {
                        if !near(j) {
                            continue;
                        }
                        bump(&mut c, epsilons, points.distance(i, j));
                    }
                    c
                })
                .reduce(
                    || vec![0u64; k],
                    |mut a, b| {
                        a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
                        a
                    },
                );
            Ok(finish(epsilons, counts, mode, total))
        }
        SweepMode::Sampled => {
            let sample = sample.ok_or(Error::MissingSample)?;
            let mut counts = vec![0u64; k];
            for &(i, j) in &sample.pairs {
                if i >= n || j >= n {
                    return Err(Error::InvalidArgument(format!(
                        "pair ({i}, {j}) invalid for {n} points"
                    )));
                }
                bump(&mut counts, epsilons, sq_dist(points.row(i), points.row(j)).sqrt());
            }
            Ok(finish(epsilons, counts, mode, sample.len() as u64))
        }
    }
}
