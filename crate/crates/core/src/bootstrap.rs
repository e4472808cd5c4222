//! Percentile bootstrap intervals for margin and co-Lipschitz quantiles.
//!
//! Resample `r` draws from substream `(seed, tag, r)`, so intervals do not
//! depend on how resamples are scheduled across threads.

use std::collections::HashSet;

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{nn_distances, quantile, quantile_sorted, sq_dist, Points};
use crate::rng;

pub const DEFAULT_RESAMPLES: usize = 200;
pub const LOWER_PERCENT: f64 = 2.5;
pub const UPPER_PERCENT: f64 = 97.5;
/// Largest cloud accepted by [`bootstrap_margin_exact`].
pub const EXACT_MAX_ROWS: usize = 5000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapInterval {
    pub point: f64,
    pub lo: f64,
    pub hi: f64,
    pub resamples: usize,
    pub seed: u64,
}

impl BootstrapInterval {
    pub fn scaled(&self, by: f64) -> Self {
        Self {
            point: self.point / by,
            lo: self.lo / by,
            hi: self.hi / by,
            ..*self
        }
    }
}

fn interval(point: f64, mut stats: Vec<f64>, resamples: usize, seed: u64) -> Result<BootstrapInterval> {
    stats.sort_unstable_by(f64::total_cmp);
    Ok(BootstrapInterval {
        point,
        lo: quantile_sorted(&stats, LOWER_PERCENT)?,
        hi: quantile_sorted(&stats, UPPER_PERCENT)?,
        resamples,
        seed,
    })
}

fn check_resamples(resamples: usize) -> Result<()> {
    if resamples == 0 {
        return Err(Error::InvalidArgument("resamples must be ≥ 1".into()));
    }
    Ok(())
}

/// Bootstrap interval for `quantile(values, q)`, resampling the multiset
/// itself with replacement.
pub fn bootstrap_quantile(
    values: &[f64],
    q: f64,
    resamples: usize,
    seed: u64,
    tag: &str,
) -> Result<BootstrapInterval> {
    check_resamples(resamples)?;
    let point = quantile(values, q)?;
    let n = values.len();
    let stats = (0..resamples)
        .into_par_iter()
        .map(|r| {
            let mut rng = rng::substream(seed, tag, r as u64);
            let draw: Vec<f64> = (0..n).map(|_| values[rng.random_range(0..n)]).collect();
            quantile(&draw, q)
        })
        .collect::<Result<Vec<_>>>()?;
    interval(point, stats, resamples, seed)
}

/// Per-row neighbor lists sorted by (distance, index), truncated to `keep`.
struct NeighborLists {
    keep: usize,
    lists: Vec<Vec<(f64, usize)>>,
}

impl NeighborLists {
    fn build(points: &Points, keep: usize) -> Self {
        let n = points.len();
        let lists = (0..n)
            .into_par_iter()
            .map(|i| {
                let mut all: Vec<(f64, usize)> = (0..n)
                    .filter(|&j| j != i)
                    .map(|j| (sq_dist(points.row(i), points.row(j)).sqrt(), j))
                    .collect();
                let k = keep.min(all.len());
                if k < all.len() {
                    all.select_nth_unstable_by(k, |a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                    all.truncate(k);
                }
                all.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                all
            })
            .collect();
        Self { keep, lists }
    }

    /// Distance from `i` to its nearest neighbor among `present`.
    fn nearest_in(&self, points: &Points, i: usize, present: &HashSet<usize>) -> Option<f64> {
        if let Some(&(d, _)) = self.lists[i].iter().find(|(_, j)| present.contains(j)) {
            return Some(d);
        }
        if self.lists[i].len() < self.keep {
            return None;
        }
        // truncated list exhausted: fall back to a full scan
        present
            .iter()
            .filter(|&&j| j != i)
            .map(|&j| sq_dist(points.row(i), points.row(j)).sqrt())
            .min_by(f64::total_cmp)
    }
}

const NEIGHBOR_KEEP: usize = 64;

/// Margin interval resampling prompts: each resample draws N row indices
/// with replacement and recomputes nearest neighbors among the distinct
/// drawn rows. A resample that draws a single distinct row is skipped.
pub fn bootstrap_margin_exact(
    points: &Points,
    q: f64,
    resamples: usize,
    seed: u64,
) -> Result<BootstrapInterval> {
    check_resamples(resamples)?;
    let n = points.len();
    if n > EXACT_MAX_ROWS {
        return Err(Error::InvalidArgument(format!(
            "exact bootstrap limited to N ≤ {EXACT_MAX_ROWS}, got {n}"
        )));
    }
    let point = quantile(&nn_distances(points)?.dist, q)?;
    let lists = NeighborLists::build(points, NEIGHBOR_KEEP);
    let stats: Vec<f64> = (0..resamples)
        .into_par_iter()
        .map(|r| {
            let mut rng = rng::substream(seed, rng::tags::BOOTSTRAP_MARGIN, r as u64);
            let draw: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
            let present: HashSet<usize> = draw.iter().copied().collect();
            if present.len() < 2 {
                return Ok(None);
            }
            let d: Vec<f64> = draw
                .iter()
                .map(|&i| lists.nearest_in(points, i, &present).expect("≥ 2 distinct rows"))
                .collect();
            quantile(&d, q).map(Some)
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();
    if stats.is_empty() {
        return Err(Error::InvalidArgument(
            "every resample drew a single distinct row".into(),
        ));
    }
    interval(point, stats, resamples, seed)
}
