//! Separation and co-Lipschitz estimators on a layer's point cloud.
//!
//! All distances are computed from direct coordinate differences with binary64
//! accumulation. Reductions run in a fixed, index-determined order so results
//! do not depend on the number of worker threads.

use std::collections::HashSet;

use rand::seq::index::sample as sample_indices;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::store::{Matrix, TokenSet};

/// Label echoed in reports for the interpolation rule used by [`quantile`].
pub const QUANTILE_RULE: &str = "linear: p = (q/100)(n-1), v[floor p] + frac(p)(v[ceil p] - v[floor p])";

const LANES: usize = 8;
const ROW_BLOCK: usize = 32;
const COL_BLOCK: usize = 128;

/// Row-major binary64 point set. Clouds loaded from disk are binary32 and
/// convert exactly; perturbed and quantized clouds live here natively.
#[derive(Debug, Clone, PartialEq)]
pub struct Points {
    n: usize,
    d: usize,
    data: Vec<f64>,
}

impl Points {
    pub fn new(n: usize, d: usize, data: Vec<f64>) -> Result<Self> {
        if d == 0 || data.len() != n * d {
            return Err(Error::InvalidArgument(format!(
                "expected {n}x{d} values, got {}",
                data.len()
            )));
        }
        if let Some(k) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                row: k / d,
                col: k % d,
            });
        }
        Ok(Self { n, d, data })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let d = rows.first().map_or(0, |r| r.as_ref().len());
        if rows.iter().any(|r| r.as_ref().len() != d) {
            return Err(Error::InvalidArgument("ragged rows".into()));
        }
        let data = rows.iter().flat_map(|r| r.as_ref().iter().copied()).collect();
        Self::new(rows.len(), d, data)
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.d..(i + 1) * self.d]
    }

    pub(crate) fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.d..(i + 1) * self.d]
    }

    pub fn scaled(&self, c: f64) -> Result<Self> {
        Self::new(self.n, self.d, self.data.iter().map(|v| v * c).collect())
    }

    pub fn distance(&self, i: usize, j: usize) -> f64 {
        sq_dist(self.row(i), self.row(j)).sqrt()
    }
}

impl From<&Matrix> for Points {
    fn from(m: &Matrix) -> Self {
        Self {
            n: m.rows(),
            d: m.cols(),
            data: m.data().iter().map(|&v| f64::from(v)).collect(),
        }
    }
}

/// Squared Euclidean distance, accumulated lane-wise in a fixed order.
#[inline]
pub fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; LANES];
    let ca = a.chunks_exact(LANES);
    let cb = b.chunks_exact(LANES);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for k in 0..LANES {
            let t = x[k] - y[k];
            acc[k] += t * t;
        }
    }
    for k in 0..ra.len() {
        let t = ra[k] - rb[k];
        acc[k] += t * t;
    }
    fold_lanes(&acc)
}

#[inline]
fn sq_norm(a: &[f64]) -> f64 {
    let mut acc = [0.0f64; LANES];
    let ca = a.chunks_exact(LANES);
    let r = ca.remainder();
    for x in ca {
        for k in 0..LANES {
            acc[k] += x[k] * x[k];
        }
    }
    for k in 0..r.len() {
        acc[k] += r[k] * r[k];
    }
    fold_lanes(&acc)
}

#[inline]
fn fold_lanes(acc: &[f64; LANES]) -> f64 {
    ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]))
}

pub fn hamming(s: &[u32], t: &[u32]) -> Result<u32> {
    if s.len() != t.len() {
        return Err(Error::LengthMismatch {
            left: s.len(),
            right: t.len(),
        });
    }
    Ok(s.iter().zip(t).filter(|(a, b)| a != b).count() as u32)
}

/// Per-row nearest-neighbor distance and the index attaining it (smallest
/// index on ties).
#[derive(Debug, Clone, PartialEq)]
pub struct NnDistances {
    pub dist: Vec<f64>,
    pub neighbor: Vec<usize>,
}

impl NnDistances {
    /// Smallest distance with its witness pair `(i, j)`, `i < j`.
    pub fn min_with_witness(&self) -> (f64, usize, usize) {
        let mut best = 0;
        for (i, &d) in self.dist.iter().enumerate() {
            if d < self.dist[best] {
                best = i;
            }
        }
        let j = self.neighbor[best];
        (self.dist[best], best.min(j), best.max(j))
    }
}

/// Exact nearest-neighbor distances by a tiled all-pairs scan.
pub fn nn_distances(points: &Points) -> Result<NnDistances> {
    let n = points.len();
    if n < 2 {
        return Err(Error::TooFewPoints { n });
    }
    let blocks: Vec<(Vec<f64>, Vec<usize>)> = (0..n)
        .into_par_iter()
        .step_by(ROW_BLOCK)
        .map(|start| {
            let end = (start + ROW_BLOCK).min(n);
            let mut best = vec![f64::INFINITY; end - start];
            let mut arg = vec![usize::MAX; end - start];
            for jb in (0..n).step_by(COL_BLOCK) {
                let je = (jb + COL_BLOCK).min(n);
                for i in start..end {
                    let xi = points.row(i);
                    let slot = i - start;
                    for j in jb..je {
                        if j == i {
                            continue;
                        }
                        let s = sq_dist(xi, points.row(j));
                        if s < best[slot] {
                            best[slot] = s;
                            arg[slot] = j;
                        }
                    }
                }
            }
            (best, arg)
        })
        .collect();
    let mut dist = Vec::with_capacity(n);
    let mut neighbor = Vec::with_capacity(n);
    for (b, a) in blocks {
        dist.extend(b.into_iter().map(f64::sqrt));
        neighbor.extend(a);
    }
    Ok(NnDistances { dist, neighbor })
}

fn check_percent(q: f64) -> Result<()> {
    if q.is_finite() && q > 0.0 && q < 100.0 {
        Ok(())
    } else {
        Err(Error::PercentOutOfRange(q))
    }
}

fn position(q: f64, n: usize) -> (usize, f64) {
    let p = q * (n - 1) as f64 / 100.0;
    let lo = (p.floor() as usize).min(n - 1);
    (lo, p - lo as f64)
}

/// Linear-interpolation quantile, `q` in percent.
pub fn quantile(values: &[f64], q: f64) -> Result<f64> {
    check_percent(q)?;
    if values.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut v = values.to_vec();
    let (lo, frac) = position(q, v.len());
    let (_, a, right) = v.select_nth_unstable_by(lo, f64::total_cmp);
    let a = *a;
    if frac == 0.0 || right.is_empty() {
        return Ok(a);
    }
    let b = right.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(a + frac * (b - a))
}

/// Same rule as [`quantile`] on an already ascending slice.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> Result<f64> {
    check_percent(q)?;
    if sorted.is_empty() {
        return Err(Error::EmptyInput);
    }
    let (lo, frac) = position(q, sorted.len());
    if frac == 0.0 || lo + 1 >= sorted.len() {
        return Ok(sorted[lo]);
    }
    let (a, b) = (sorted[lo], sorted[lo + 1]);
    Ok(a + frac * (b - a))
}

pub fn margin_hat(points: &Points, q: f64) -> Result<f64> {
    check_percent(q)?;
    quantile(&nn_distances(points)?.dist, q)
}

pub fn min_margin(points: &Points) -> Result<f64> {
    Ok(nn_distances(points)?.min_with_witness().0)
}

/// Seeded sample of unordered index pairs with their Hamming distances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairSample {
    pub pairs: Vec<(usize, usize)>,
    pub hamming: Vec<u32>,
    pub seed: u64,
    pub d_min: u32,
}

impl PairSample {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Every pair of the token set whose Hamming distance is at least `d_min`.
    pub fn all_pairs(tokens: &TokenSet, d_min: u32) -> Self {
        let (pairs, hamming) = valid_pairs(tokens, d_min).into_iter().unzip();
        Self {
            pairs,
            hamming,
            seed: 0,
            d_min,
        }
    }

    /// Keep only pairs whose Hamming distance satisfies `keep`.
    pub fn filtered(&self, keep: impl Fn(u32) -> bool) -> Self {
        let (pairs, hamming) = self
            .pairs
            .iter()
            .zip(&self.hamming)
            .filter(|(_, &h)| keep(h))
            .map(|(&p, &h)| (p, h))
            .unzip();
        Self {
            pairs,
            hamming,
            seed: self.seed,
            d_min: self.d_min,
        }
    }
}

fn valid_pairs(tokens: &TokenSet, d_min: u32) -> Vec<((usize, usize), u32)> {
    let n = tokens.len();
    (0..n)
        .into_par_iter()
        .flat_map_iter(|i| {
            (i + 1..n).filter_map(move |j| {
                let h = hamming(tokens.seq(i), tokens.seq(j)).expect("fixed length");
                (h >= d_min).then_some(((i, j), h))
            })
        })
        .collect()
}

/// Draw up to `requested` distinct unordered pairs uniformly without
/// replacement, discarding pairs closer than `d_min` in Hamming distance.
/// Returned pairs are sorted ascending.
pub fn sample_pairs(
    n: usize,
    requested: usize,
    seed: u64,
    tokens: &TokenSet,
    d_min: u32,
) -> Result<PairSample> {
    if n < 2 {
        return Err(Error::TooFewPoints { n });
    }
    if n != tokens.len() {
        return Err(Error::InvalidArgument(format!(
            "n = {n} but token set has {} sequences",
            tokens.len()
        )));
    }
    if requested == 0 {
        return Err(Error::InvalidArgument("requested pair count must be ≥ 1".into()));
    }
    let total = n as u64 * (n as u64 - 1) / 2;
    let mut rng = rng::seeded(seed, rng::tags::PAIRS);

    let mut picked = if total <= (4 * requested as u64).max(1 << 20) {
        None
    } else {
        rejection_sample(n, requested, tokens, d_min, &mut rng)
    };
    if picked.is_none() {
        let all = valid_pairs(tokens, d_min);
        picked = Some(if all.len() <= requested {
            all
        } else {
            sample_indices(&mut rng, all.len(), requested)
                .into_iter()
                .map(|k| all[k])
                .collect()
        });
    }
    let mut picked = picked.unwrap();
    if picked.is_empty() {
        return Err(Error::NoValidPairs { d_min });
    }
    picked.sort_unstable();
    let (pairs, hamming) = picked.into_iter().unzip();
    Ok(PairSample {
        pairs,
        hamming,
        seed,
        d_min,
    })
}

/// Returns `None` when too many draws are rejected, in which case the caller
/// enumerates the valid pairs instead.
fn rejection_sample(
    n: usize,
    requested: usize,
    tokens: &TokenSet,
    d_min: u32,
    rng: &mut rng::Rng,
) -> Option<Vec<((usize, usize), u32)>> {
    let cap = 64 * requested as u64 + 1024;
    let mut seen = HashSet::with_capacity(requested * 2);
    let mut out = Vec::with_capacity(requested);
    let mut draws = 0u64;
    while out.len() < requested {
        draws += 1;
        if draws > cap {
            return None;
        }
        let a = rng.random_range(0..n);
        let b = rng.random_range(0..n);
        if a == b {
            continue;
        }
        let key = (a.min(b), a.max(b));
        if !seen.insert(key) {
            continue;
        }
        let h = hamming(tokens.seq(key.0), tokens.seq(key.1)).expect("fixed length");
        if h >= d_min {
            out.push((key, h));
        }
    }
    Some(out)
}

/// `‖x_i − x_j‖ / d_in(s_i, s_j)` for every sampled pair, in sample order.
pub fn colip_ratios(points: &Points, tokens: &TokenSet, sample: &PairSample) -> Result<Vec<f64>> {
    let n = points.len();
    if tokens.len() != n {
        return Err(Error::InvalidArgument(format!(
            "cloud has {n} rows but token set has {} sequences",
            tokens.len()
        )));
    }
    sample
        .pairs
        .par_iter()
        .zip(&sample.hamming)
        .map(|(&(i, j), &h)| {
            if i >= n || j >= n || i == j {
                return Err(Error::InvalidArgument(format!(
                    "pair ({i}, {j}) invalid for {n} points"
                )));
            }
            if h == 0 {
                return Err(Error::ZeroHamming { i, j });
            }
            Ok(points.distance(i, j) / f64::from(h))
        })
        .collect()
}

pub fn colip_hat(ratios: &[f64], q: f64) -> Result<f64> {
    quantile(ratios, q)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: f64,
    pub median: f64,
    pub trimmed: f64,
}

/// Fraction trimmed from each end for [`NormStats::trimmed`].
pub const TRIM_FRACTION: f64 = 0.05;

pub fn row_norms(points: &Points) -> Vec<f64> {
    (0..points.len())
        .into_par_iter()
        .map(|i| sq_norm(points.row(i)).sqrt())
        .collect()
}

pub fn norm_stats(points: &Points) -> Result<NormStats> {
    let n = points.len();
    if n == 0 {
        return Err(Error::EmptyInput);
    }
    let norms = row_norms(points);
    let mean = norms.iter().sum::<f64>() / n as f64;
    let mut sorted = norms;
    sorted.sort_unstable_by(f64::total_cmp);
    let median = quantile_sorted(&sorted, 50.0)?;
    let drop = (TRIM_FRACTION * n as f64).floor() as usize;
    let kept = &sorted[drop..n - drop];
    let trimmed = kept.iter().sum::<f64>() / kept.len() as f64;
    Ok(NormStats {
        mean,
        median,
        trimmed,
    })
}

pub fn normalize(value: f64, rho: f64) -> Result<f64> {
    if !(rho > 0.0) {
        return Err(Error::ZeroMeanNorm);
    }
    Ok(value / rho)
}

/// A raw statistic and its three scale-free variants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalized {
    pub raw: f64,
    pub by_mean: f64,
    pub by_median: f64,
    pub by_trimmed: f64,
}

impl Normalized {
    pub fn new(raw: f64, norms: &NormStats) -> Result<Self> {
        Ok(Self {
            raw,
            by_mean: normalize(raw, norms.mean)?,
            by_median: normalize(raw, norms.median)?,
            by_trimmed: normalize(raw, norms.trimmed)?,
        })
    }
}

/// Per-layer summary of norms, margins, co-Lipschitz values and collisions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerDiagnostics {
    pub layer: usize,
    pub q: f64,
    pub norms: NormStats,
    pub margin_q: Normalized,
    pub colip_q: Normalized,
    pub min_margin: f64,
    pub collisions: u64,
}

impl LayerDiagnostics {
    /// Checks the relations every emitted record must satisfy.
    pub fn check_invariants(&self) -> std::result::Result<(), String> {
        if self.min_margin > self.margin_q.raw {
            return Err(format!(
                "layer {}: min_margin {} > margin_q {}",
                self.layer, self.min_margin, self.margin_q.raw
            ));
        }
        if (self.collisions > 0) != (self.min_margin == 0.0) {
            return Err(format!(
                "layer {}: collisions {} inconsistent with min_margin {}",
                self.layer, self.collisions, self.min_margin
            ));
        }
        for (name, v) in [("margin", &self.margin_q), ("colip", &self.colip_q)] {
            let back = v.by_mean * self.norms.mean;
            if (back - v.raw).abs() > 4.0 * f64::EPSILON * v.raw.abs() {
                return Err(format!(
                    "layer {}: normalized {name} × mean norm = {back}, raw {}",
                    self.layer, v.raw
                ));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pts(rows: &[&[f64]]) -> Points {
        Points::from_rows(rows).unwrap()
    }

    fn naive_nn(p: &Points) -> Vec<f64> {
        (0..p.len())
            .map(|i| {
                (0..p.len())
                    .filter(|&j| j != i)
                    .map(|j| {
                        p.row(i)
                            .iter()
                            .zip(p.row(j))
                            .map(|(a, b)| (a - b) * (a - b))
                            .sum::<f64>()
                            .sqrt()
                    })
                    .fold(f64::INFINITY, f64::min)
            })
            .collect()
    }

    fn sorted_quantile(v: &[f64], q: f64) -> f64 {
        let mut s = v.to_vec();
        s.sort_by(f64::total_cmp);
        let p = q * (s.len() - 1) as f64 / 100.0;
        let lo = p.floor() as usize;
        let hi = p.ceil() as usize;
        s[lo] + (p - lo as f64) * (s[hi] - s[lo])
    }

    #[test]
    fn hamming_examples() {
        assert_eq!(hamming(&[1, 2, 3], &[1, 2, 4]).unwrap(), 1);
        assert_eq!(hamming(&[1, 2, 3], &[1, 2, 3]).unwrap(), 0);
        assert_eq!(hamming(&[1, 2, 3], &[4, 5, 6]).unwrap(), 3);
        assert!(matches!(
            hamming(&[1, 2], &[1]),
            Err(Error::LengthMismatch { .. })
        ));
    }

    #[test]
    fn hamming_is_a_metric_exhaustively() {
        // K = 3 over a 3-letter alphabet: all 27 sequences.
        let seqs: Vec<[u32; 3]> = (0..27u32).map(|v| [v % 3, (v / 3) % 3, v / 9]).collect();
        for a in &seqs {
            for b in &seqs {
                let ab = hamming(a, b).unwrap();
                assert_eq!(ab, hamming(b, a).unwrap());
                assert_eq!(ab == 0, a == b);
                for c in &seqs {
                    assert!(ab <= hamming(a, c).unwrap() + hamming(c, b).unwrap());
                }
            }
        }
    }

    #[test]
    fn nn_small_cloud() {
        let p = pts(&[&[0.0, 0.0], &[0.0, 1.0], &[3.0, 4.0]]);
        let nn = nn_distances(&p).unwrap();
        // exhaustive: d01 = 1, d02 = 5, d12 = sqrt(9 + 9)
        let d12 = 18f64.sqrt();
        assert_eq!(nn.dist, vec![1.0, 1.0, d12]);
        assert!((d12 - 4.242640687).abs() < 1e-9);
        assert_eq!(nn.neighbor, vec![1, 0, 1]);
        assert_eq!(min_margin(&p).unwrap(), 1.0);
        assert_eq!(margin_hat(&p, 50.0).unwrap(), 1.0);
    }

    #[test]
    fn nn_duplicates_and_scaling() {
        let p = pts(&[&[1.0, 2.0], &[1.0, 2.0], &[5.0, 5.0]]);
        let nn = nn_distances(&p).unwrap();
        assert_eq!(nn.dist[0], 0.0);
        assert_eq!(nn.dist[1], 0.0);
        assert_eq!(min_margin(&p).unwrap(), 0.0);
        assert_eq!(margin_hat(&p, 1.0).unwrap(), 0.0);

        let p = pts(&[&[0.0, 0.0], &[0.0, 1.0], &[3.0, 4.0]]);
        let base = nn_distances(&p).unwrap().dist;
        let scaled = nn_distances(&p.scaled(10.0).unwrap()).unwrap().dist;
        for (a, b) in base.iter().zip(&scaled) {
            assert!((b - 10.0 * a).abs() <= 1e-12 * b);
        }
    }

    #[test]
    fn nn_needs_two_points() {
        let p = pts(&[&[0.0]]);
        let err = nn_distances(&p).unwrap_err();
        assert!(err.to_string().contains("need at least two points"));
        assert!(min_margin(&p).is_err());
    }

    #[test]
    fn min_margin_single_pair() {
        assert_eq!(min_margin(&pts(&[&[0.0, 0.0], &[0.0, 2.0]])).unwrap(), 2.0);
    }

    #[test]
    fn quantile_examples() {
        assert_eq!(quantile(&[1.0, 2.0, 3.0, 4.0], 50.0).unwrap(), 2.5);
        assert_eq!(quantile(&[5.0], 1.0).unwrap(), 5.0);
        let v: Vec<f64> = (0..=100).map(f64::from).collect();
        assert_eq!(quantile(&v, 1.0).unwrap(), 1.0);
        assert!(matches!(quantile(&[], 50.0), Err(Error::EmptyInput)));
        assert!(quantile(&[1.0], 0.0).is_err());
        assert!(quantile(&[1.0], 100.0).is_err());
        assert!(quantile(&[1.0], f64::NAN).is_err());
    }

    #[test]
    fn colip_examples() {
        let p = pts(&[&[0.0, 0.0], &[0.0, 2.0], &[6.0, 8.0]]);
        let t = TokenSet::from_seqs(&[[1u32, 2, 3], [1, 2, 4], [7, 8, 9]]).unwrap();
        let sample = PairSample::all_pairs(&t, 1);
        let r = colip_ratios(&p, &t, &sample).unwrap();
        // (0,1): 2/1; (0,2): 10/3; (1,2): sqrt(36+36)/3
        let expect = [2.0, 10.0 / 3.0, 72f64.sqrt() / 3.0];
        for (a, b) in r.iter().zip(expect) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
        let c = colip_hat(&r, 1.0).unwrap();
        // p = 0.02 between 2.0 and 2.8284...
        let hand = 2.0 + 0.02 * (72f64.sqrt() / 3.0 - 2.0);
        assert!((c - hand).abs() < 1e-12);
        assert!((c - 2.0166).abs() < 1e-4);
        assert_eq!(colip_hat(&[3.0; 7], 37.0).unwrap(), 3.0);
        assert_eq!(colip_hat(&[0.0, 1.0, 2.0, 3.0], 1.0).unwrap(), 0.03);
    }

    #[test]
    fn colip_zero_for_identical_rows() {
        let p = pts(&[&[1.0, 1.0], &[1.0, 1.0]]);
        let t = TokenSet::from_seqs(&[[1u32, 2], [3, 4]]).unwrap();
        let sample = PairSample::all_pairs(&t, 1);
        assert_eq!(sample.hamming, vec![2]);
        assert_eq!(colip_ratios(&p, &t, &sample).unwrap(), vec![0.0]);
    }

    #[test]
    fn colip_rejects_zero_hamming() {
        let p = pts(&[&[1.0], &[2.0]]);
        let t = TokenSet::from_seqs(&[[1u32], [2]]).unwrap();
        let bad = PairSample {
            pairs: vec![(0, 1)],
            hamming: vec![0],
            seed: 0,
            d_min: 0,
        };
        assert!(matches!(
            colip_ratios(&p, &t, &bad),
            Err(Error::ZeroHamming { i: 0, j: 1 })
        ));
    }

    #[test]
    fn sample_pairs_exhausts_small_sets() {
        let t = TokenSet::from_seqs(&[[1u32, 2], [1, 3], [4, 4]]).unwrap();
        let s = sample_pairs(3, 10, 9, &t, 1).unwrap();
        assert_eq!(s.pairs, vec![(0, 1), (0, 2), (1, 2)]);
        assert_eq!(s.hamming, vec![1, 2, 2]);
        assert_eq!(s, sample_pairs(3, 10, 9, &t, 1).unwrap());
    }

    #[test]
    fn sample_pairs_no_valid() {
        let t = TokenSet::from_seqs(&[[1u32, 2], [1, 3]]).unwrap();
        let err = sample_pairs(2, 5, 0, &t, 2).unwrap_err();
        assert!(err.to_string().contains("no pairs satisfy d_min"));
    }

    fn random_tokens(n: usize, k: usize, vocab: u32, seed: u64) -> TokenSet {
        let mut r = rng::seeded(seed, "test-tokens");
        let mut seen = HashSet::new();
        let mut ids = Vec::new();
        while seen.len() < n {
            let s: Vec<u32> = (0..k).map(|_| r.random_range(0..vocab)).collect();
            if seen.insert(s.clone()) {
                ids.extend(s);
            }
        }
        TokenSet::new(n, k, ids).unwrap()
    }

    #[test]
    fn sample_pairs_rejection_path() {
        let t = random_tokens(3000, 5, 6, 1);
        let s = sample_pairs(3000, 2000, 11, &t, 2).unwrap();
        assert_eq!(s.len(), 2000);
        let uniq: HashSet<_> = s.pairs.iter().collect();
        assert_eq!(uniq.len(), 2000);
        for (&(i, j), &h) in s.pairs.iter().zip(&s.hamming) {
            assert!(i < j);
            assert!(h >= 2);
            assert_eq!(h, hamming(t.seq(i), t.seq(j)).unwrap());
        }
        assert_eq!(s, sample_pairs(3000, 2000, 11, &t, 2).unwrap());
        assert_ne!(s, sample_pairs(3000, 2000, 12, &t, 2).unwrap());
    }

    #[test]
    fn sample_pairs_enumeration_subsample() {
        let t = random_tokens(100, 3, 6, 2);
        let all = PairSample::all_pairs(&t, 1);
        let s = sample_pairs(100, 500, 3, &t, 1).unwrap();
        assert_eq!(s.len(), 500);
        let universe: HashSet<_> = all.pairs.iter().collect();
        assert!(s.pairs.iter().all(|p| universe.contains(p)));
    }

    #[test]
    fn norm_stats_examples() {
        let s = norm_stats(&pts(&[&[3.0, 4.0], &[0.0, 0.0]])).unwrap();
        assert_eq!((s.mean, s.median, s.trimmed), (2.5, 2.5, 2.5));
        let s = norm_stats(&pts(&[&[1.0, 0.0]])).unwrap();
        assert_eq!((s.mean, s.median, s.trimmed), (1.0, 1.0, 1.0));

        let mut rows: Vec<Vec<f64>> = (0..40).map(|_| vec![0.0, 1.0]).collect();
        rows.push(vec![1000.0, 0.0]);
        let s = norm_stats(&Points::from_rows(&rows).unwrap()).unwrap();
        // floor(0.05 * 41) = 2 dropped per end leaves 37 unit norms
        assert_eq!(s.trimmed, 1.0);
        assert!((s.mean - 1040.0 / 41.0).abs() < 1e-12);
        assert_eq!(s.median, 1.0);
    }

    #[test]
    fn normalize_examples() {
        assert_eq!(normalize(5.0, 2.5).unwrap(), 2.0);
        assert_eq!(normalize(0.0, 3.0).unwrap(), 0.0);
        let err = normalize(1.0, 0.0).unwrap_err();
        assert!(err.to_string().contains("zero mean norm"));
    }

    #[test]
    fn normalized_margin_is_scale_free() {
        let p = pts(&[&[0.0, 0.0], &[0.0, 1.0], &[3.0, 4.0], &[-1.0, 2.0]]);
        let m = margin_hat(&p, 50.0).unwrap() / norm_stats(&p).unwrap().mean;
        let c = p.scaled(7.5).unwrap();
        let mc = margin_hat(&c, 50.0).unwrap() / norm_stats(&c).unwrap().mean;
        assert!((m - mc).abs() <= 1e-12 * m);
    }

    #[test]
    fn nn_independent_of_threads() {
        let mut r = rng::seeded(5, "test-cloud");
        let data: Vec<f64> = (0..300 * 17).map(|_| r.random::<f64>() - 0.5).collect();
        let p = Points::new(300, 17, data).unwrap();
        let one = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap()
            .install(|| nn_distances(&p).unwrap());
        let many = rayon::ThreadPoolBuilder::new()
            .num_threads(4)
            .build()
            .unwrap()
            .install(|| nn_distances(&p).unwrap());
        assert_eq!(one, many);
    }

    proptest! {
        #[test]
        fn nn_matches_naive(
            n in 2usize..60,
            d in 1usize..20,
            seed in any::<u64>(),
            scale_exp in -3i32..=3,
        ) {
            let mut r = rng::seeded(seed, "prop-cloud");
            let scale = 10f64.powi(scale_exp);
            let data: Vec<f64> = (0..n * d).map(|_| (r.random::<f64>() - 0.5) * scale).collect();
            let p = Points::new(n, d, data).unwrap();
            let fast = nn_distances(&p).unwrap();
            let slow = naive_nn(&p);
            for (a, b) in fast.dist.iter().zip(&slow) {
                prop_assert!((a - b).abs() <= 1e-12 * b.max(f64::MIN_POSITIVE));
            }
            for (i, &j) in fast.neighbor.iter().enumerate() {
                prop_assert!(fast.dist[j] <= fast.dist[i]);
            }
        }

        #[test]
        fn quantile_matches_sorted_reference(
            v in prop::collection::vec(-1e6f64..1e6, 1..200),
            q in 0.001f64..99.999,
        ) {
            prop_assert_eq!(quantile(&v, q).unwrap(), sorted_quantile(&v, q));
            let mut s = v.clone();
            s.sort_by(f64::total_cmp);
            prop_assert_eq!(quantile_sorted(&s, q).unwrap(), sorted_quantile(&v, q));
        }

        #[test]
        fn quantile_monotone_and_bounded(
            v in prop::collection::vec(-1e3f64..1e3, 1..100),
            q1 in 0.001f64..99.999,
            q2 in 0.001f64..99.999,
        ) {
            let (lo, hi) = if q1 <= q2 { (q1, q2) } else { (q2, q1) };
            let a = quantile(&v, lo).unwrap();
            let b = quantile(&v, hi).unwrap();
            prop_assert!(a <= b);
            let min = v.iter().copied().fold(f64::INFINITY, f64::min);
            let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(a >= min && b <= max);
        }
    }
}
