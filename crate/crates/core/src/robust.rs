//! Robust injectivity radius: every perturbation moving each point by less
//! than half the margin keeps the set injective, and collapsing the closest
//! pair onto its midpoint shows the bound is tight.

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::collision::exact_collisions_points;
use crate::error::{Error, Result};
use crate::metrics::{nn_distances, sq_dist, Points};
use crate::quant::{dynamic_range, quantize_cloud, safety_check, QuantSpec, Verdict};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RadiusReport {
    pub margin: f64,
    pub r_inj: f64,
    pub witness: (usize, usize),
}

pub fn robust_injectivity_radius(points: &Points) -> Result<RadiusReport> {
    let (margin, i, j) = nn_distances(points)?.min_with_witness();
    if margin == 0.0 {
        return Err(Error::NotInjective);
    }
    Ok(RadiusReport {
        margin,
        r_inj: margin / 2.0,
        witness: (i, j),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Collapse {
    pub points: Points,
    pub witness: (usize, usize),
    /// Largest displacement of any row.
    pub displacement: f64,
}

/// Move the two witness rows toward each other by `radius` each, landing both
/// exactly on their midpoint once `radius ≥ margin / 2`.
pub fn scaled_collapse(points: &Points, radius: f64) -> Result<Collapse> {
    let rep = robust_injectivity_radius(points)?;
    let (i, j) = rep.witness;
    let mut out = points.clone();
    let a = points.row(i).to_vec();
    let b = points.row(j).to_vec();
    if radius >= rep.r_inj {
        let mid: Vec<f64> = a.iter().zip(&b).map(|(x, y)| 0.5 * (x + y)).collect();
        out.row_mut(i).copy_from_slice(&mid);
        out.row_mut(j).copy_from_slice(&mid);
    } else {
        let t = radius / rep.margin;
        for k in 0..a.len() {
            let step = t * (b[k] - a[k]);
            out.row_mut(i)[k] = a[k] + step;
            out.row_mut(j)[k] = b[k] - step;
        }
    }
    let displacement = sq_dist(out.row(i), &a)
        .sqrt()
        .max(sq_dist(out.row(j), &b).sqrt());
    Ok(Collapse {
        points: out,
        witness: (i, j),
        displacement,
    })
}

/// The upper-bound construction: the closest pair mapped onto its midpoint.
pub fn midpoint_collapse(points: &Points) -> Result<Collapse> {
    scaled_collapse(points, f64::INFINITY)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "verdict", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum OracleVerdict {
    AllInjective,
    /// Index 0 is the scaled midpoint construction; `1..=trials` are the
    /// random perturbations.
    CollisionFound { perturbation: usize },
}

/// Row displacement drawn uniformly from the ball of radius `r`.
fn ball_sample(rng: &mut rng::Rng, d: usize, r: f64) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            let u: f64 = rng.random();
            let scale = r * u.powf(1.0 / d as f64) / norm;
            return v.into_iter().map(|x| x * scale).collect();
        }
    }
}

fn injective(points: &Points) -> bool {
    nn_distances(points).is_ok_and(|nn| nn.min_with_witness().0 > 0.0)
}

/// Search for an `r`-perturbation that breaks injectivity: the scaled
/// midpoint construction plus `trials` random ones.
pub fn perturbation_oracle(points: &Points, r: f64, trials: usize, seed: u64) -> Result<OracleVerdict> {
    if trials == 0 {
        return Err(Error::InvalidArgument("trials must be ≥ 1".into()));
    }
    if !(r.is_finite() && r >= 0.0) {
        return Err(Error::InvalidArgument(format!("invalid radius {r}")));
    }
    let first_failure = (0..=trials)
        .into_par_iter()
        .find_first(|&t| {
            let perturbed = if t == 0 {
                match scaled_collapse(points, r) {
                    Ok(c) => c.points,
                    // already colliding
                    Err(_) => return true,
                }
            } else {
                let mut rng = rng::substream(seed, rng::tags::PERTURB, t as u64);
                let mut p = points.clone();
                for i in 0..p.len() {
                    let delta = ball_sample(&mut rng, p.dim(), r);
                    p.row_mut(i).iter_mut().zip(delta).for_each(|(x, dx)| *x += dx);
                }
                p
            };
            !injective(&perturbed)
        });
    Ok(match first_failure {
        Some(perturbation) => OracleVerdict::CollisionFound { perturbation },
        None => OracleVerdict::AllInjective,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorollaryCheck {
    pub spec: QuantSpec,
    pub margin: f64,
    pub verdict: Verdict,
    pub collisions: u64,
}

/// Quantize with the cloud's own range and compare the safety verdict with
/// the collisions actually observed on the integer codes.
pub fn verify_quantization_corollary(points: &Points, bits: u32) -> Result<CorollaryCheck> {
    let margin = robust_injectivity_radius(points)?.margin;
    let spec = QuantSpec::new(dynamic_range(points), bits)?;
    let verdict = safety_check(margin, points.dim(), spec.step);
    let collisions = quantize_cloud(points, &spec)?.collisions().colliding_pairs;
    assert!(
        !(verdict == Verdict::Safe && collisions > 0),
        "SAFE verdict with {collisions} collisions at {bits} bits"
    );
    Ok(CorollaryCheck {
        spec,
        margin,
        verdict,
        collisions,
    })
}

/// Collisions among binary64 rows, exposed for perturbed clouds.
pub fn collisions(points: &Points) -> u64 {
    exact_collisions_points(points).colliding_pairs
}
