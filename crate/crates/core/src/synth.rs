//! Synthetic fixtures with known ground truth.
//!
//! - `gaussian`: iid standard normal rows, layer `ℓ` scaled by `ℓ`.
//! - `planted-duplicates`: gaussian with `dups` disjoint row pairs copied
//!   bitwise on every layer.
//! - `hamming-embed`: `x_i = Σ_t E_t[s_{i,t}]` with per-position codebooks.
//!   When `d ≥ K·V` all codebook vectors are orthonormal, so two prompts
//!   differing in one position sit exactly √2 apart.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::index::sample as sample_indices;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{Error, Result};
use crate::rng;
use crate::store::{write_matrix, write_tokens, LayerEntry, Matrix, Run, RunManifest, TokenSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SynthMode {
    Gaussian,
    PlantedDuplicates,
    HammingEmbed,
}

impl SynthMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            SynthMode::Gaussian => "gaussian",
            SynthMode::PlantedDuplicates => "planted-duplicates",
            SynthMode::HammingEmbed => "hamming-embed",
        }
    }
}

impl FromStr for SynthMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaussian" => Ok(SynthMode::Gaussian),
            "planted-duplicates" => Ok(SynthMode::PlantedDuplicates),
            "hamming-embed" => Ok(SynthMode::HammingEmbed),
            other => Err(Error::InvalidArgument(format!("unknown synth mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub mode: SynthMode,
    pub n: usize,
    pub d: usize,
    pub layers: usize,
    pub k: usize,
    pub vocab: u32,
    pub dups: usize,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct Synthetic {
    pub run: Run,
    /// Row pairs copied bitwise (planted-duplicates only).
    pub planted: Vec<(usize, usize)>,
}

fn capacity(vocab: u32, k: usize) -> u128 {
    let mut c: u128 = 1;
    for _ in 0..k {
        c = c.saturating_mul(u128::from(vocab));
    }
    c
}

fn decode_index(mut idx: u128, vocab: u32, k: usize) -> Vec<u32> {
    let v = u128::from(vocab);
    (0..k)
        .map(|_| {
            let t = (idx % v) as u32;
            idx /= v;
            t
        })
        .collect()
}

/// `n` distinct sequences of length `k` over `0..vocab`, in draw order.
pub fn random_tokens(n: usize, k: usize, vocab: u32, seed: u64) -> Result<TokenSet> {
    if n == 0 || k == 0 || vocab == 0 {
        return Err(Error::InvalidArgument(format!(
            "token set needs n, k, vocab ≥ 1 (got {n}, {k}, {vocab})"
        )));
    }
    let cap = capacity(vocab, k);
    if (n as u128) > cap {
        return Err(Error::Capacity { n, capacity: cap });
    }
    let mut r = rng::substream(seed, rng::tags::SYNTH, 0);
    let mut ids = Vec::with_capacity(n * k);
    if cap <= 4 * n as u128 {
        for idx in sample_indices(&mut r, cap as usize, n) {
            ids.extend(decode_index(idx as u128, vocab, k));
        }
    } else {
        let mut seen = HashSet::with_capacity(n);
        while seen.len() < n {
            let s: Vec<u32> = (0..k).map(|_| r.random_range(0..vocab)).collect();
            if seen.insert(s.clone()) {
                ids.extend(s);
            }
        }
    }
    TokenSet::new(n, k, ids)
}

fn gaussian_layer(n: usize, d: usize, scale: f64, r: &mut rng::Rng) -> Vec<f32> {
    (0..n * d)
        .map(|_| {
            let z: f64 = StandardNormal.sample(r);
            (z * scale) as f32
        })
        .collect()
}

/// `count` vectors of dimension `d`, orthonormal when `count ≤ d`, otherwise
/// iid normal with variance `1/d`.
fn codebook(count: usize, d: usize, r: &mut rng::Rng) -> Vec<Vec<f64>> {
    let raw: Vec<Vec<f64>> = (0..count)
        .map(|_| (0..d).map(|_| StandardNormal.sample(r)).collect())
        .collect();
    if count > d {
        let s = 1.0 / (d as f64).sqrt();
        return raw.into_iter().map(|v| v.into_iter().map(|x| x * s).collect()).collect();
    }
    // modified Gram-Schmidt, two passes
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(count);
    for mut v in raw {
        for _ in 0..2 {
            for b in &basis {
                let dot: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
                v.iter_mut().zip(b).for_each(|(x, y)| *x -= dot * y);
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter_mut().for_each(|x| *x /= norm);
        basis.push(v);
    }
    basis
}

fn hamming_layer(tokens: &TokenSet, d: usize, vocab: u32, r: &mut rng::Rng) -> Vec<f32> {
    let k = tokens.seq_len();
    let v = vocab as usize;
    let book = codebook(k * v, d, r);
    let mut out = Vec::with_capacity(tokens.len() * d);
    for i in 0..tokens.len() {
        let mut x = vec![0.0f64; d];
        for (t, &tok) in tokens.seq(i).iter().enumerate() {
            let e = &book[t * v + tok as usize];
            x.iter_mut().zip(e).for_each(|(a, b)| *a += b);
        }
        out.extend(x.into_iter().map(|a| a as f32));
    }
    out
}

pub fn generate(spec: &SynthSpec) -> Result<Synthetic> {
    if spec.n < 2 || spec.d == 0 || spec.layers == 0 {
        return Err(Error::InvalidArgument(format!(
            "synth needs n ≥ 2, d ≥ 1, layers ≥ 1 (got {}, {}, {})",
            spec.n, spec.d, spec.layers
        )));
    }
    if spec.mode == SynthMode::PlantedDuplicates && 2 * spec.dups > spec.n {
        return Err(Error::InvalidArgument(format!(
            "{} disjoint duplicate pairs need at least {} rows",
            spec.dups,
            2 * spec.dups
        )));
    }
    let tokens = random_tokens(spec.n, spec.k, spec.vocab, spec.seed)?;
    let planted: Vec<(usize, usize)> = if spec.mode == SynthMode::PlantedDuplicates {
        let mut r = rng::substream(spec.seed, "synth/planted", 0);
        let rows = sample_indices(&mut r, spec.n, 2 * spec.dups).into_vec();
        let mut pairs: Vec<(usize, usize)> = rows
            .chunks_exact(2)
            .map(|c| (c[0].min(c[1]), c[0].max(c[1])))
            .collect();
        pairs.sort_unstable();
        pairs
    } else {
        Vec::new()
    };

    let mut layers = Vec::with_capacity(spec.layers);
    for l in 1..=spec.layers {
        let mut r = rng::substream(spec.seed, rng::tags::SYNTH, l as u64);
        let mut data = match spec.mode {
            SynthMode::Gaussian | SynthMode::PlantedDuplicates => {
                gaussian_layer(spec.n, spec.d, l as f64, &mut r)
            }
            SynthMode::HammingEmbed => hamming_layer(&tokens, spec.d, spec.vocab, &mut r),
        };
        for &(a, b) in &planted {
            let (src, dst) = (a * spec.d, b * spec.d);
            data.copy_within(src..src + spec.d, dst);
        }
        layers.push((l, Matrix::new(spec.n, spec.d, data)?));
    }

    let mut meta = BTreeMap::new();
    meta.insert("synth".to_string(), serde_json::to_value(spec).expect("plain data"));
    if !planted.is_empty() {
        meta.insert("planted_pairs".to_string(), json!(planted));
    }
    let manifest = RunManifest {
        model_id: format!("synth-{}", spec.mode.as_str()),
        k: spec.k,
        n: spec.n,
        hidden_dim: spec.d,
        token_file: "tokens.bin".into(),
        layers: (1..=spec.layers)
            .map(|l| LayerEntry {
                index: l,
                file: layer_file(l),
            })
            .collect(),
        meta,
    };
    Ok(Synthetic {
        run: Run::from_parts(manifest, tokens, layers)?,
        planted,
    })
}

pub fn layer_file(layer: usize) -> String {
    format!("layer_{layer:03}.bin")
}

/// Write token file, layer matrices and `manifest.json` into `dir`.
pub fn write_run(run: &Run, dir: impl AsRef<Path>) -> Result<PathBuf> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_tokens(dir.join(&run.manifest.token_file), &run.tokens)?;
    for ((_, m), entry) in run.layers().iter().zip(&run.manifest.layers) {
        write_matrix(dir.join(&entry.file), m)?;
    }
    let path = dir.join("manifest.json");
    run.manifest.save(&path)?;
    Ok(path)
}

pub fn synth_generate(spec: &SynthSpec, dir: impl AsRef<Path>) -> Result<(PathBuf, Synthetic)> {
    let s = generate(spec)?;
    let path = write_run(&s.run, dir)?;
    Ok((path, s))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::collision::exact_collisions;
    use crate::metrics::{colip_ratios, PairSample, Points};
    use crate::store::load_manifest;

    fn spec(mode: SynthMode) -> SynthSpec {
        SynthSpec {
            mode,
            n: 100,
            d: 8,
            layers: 2,
            k: 4,
            vocab: 10,
            dups: 3,
            seed: 5,
        }
    }

    #[test]
    fn planted_pairs_exact() {
        let s = generate(&spec(SynthMode::PlantedDuplicates)).unwrap();
        assert_eq!(s.planted.len(), 3);
        for (_, m) in s.run.layers() {
            let c = exact_collisions(m);
            assert_eq!(c.colliding_pairs, 3);
            let groups: Vec<(usize, usize)> = c.groups.iter().map(|g| (g[0], g[1])).collect();
            assert_eq!(groups, s.planted);
        }
    }

    #[test]
    fn gaussian_deterministic_files() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        synth_generate(&spec(SynthMode::Gaussian), a.path()).unwrap();
        synth_generate(&spec(SynthMode::Gaussian), b.path()).unwrap();
        for f in ["tokens.bin", "layer_001.bin", "layer_002.bin", "manifest.json"] {
            assert_eq!(
                fs::read(a.path().join(f)).unwrap(),
                fs::read(b.path().join(f)).unwrap(),
                "{f}"
            );
        }
        let run = load_manifest(a.path().join("manifest.json")).unwrap();
        assert_eq!(run.layers().len(), 2);
    }

    #[test]
    fn capacity_error() {
        let mut s = spec(SynthMode::Gaussian);
        s.vocab = 3;
        s.k = 2;
        s.n = 10;
        assert!(matches!(generate(&s), Err(Error::Capacity { n: 10, capacity: 9 })));
        s.n = 9;
        assert_eq!(generate(&s).unwrap().run.tokens.len(), 9);
    }

    #[test]
    fn hamming_embed_orthonormal() {
        let s = SynthSpec {
            mode: SynthMode::HammingEmbed,
            n: 60,
            d: 24,
            layers: 1,
            k: 3,
            vocab: 5,
            dups: 0,
            seed: 1,
        };
        let out = generate(&s).unwrap();
        let tokens = &out.run.tokens;
        let sample = PairSample::all_pairs(tokens, 1).filtered(|h| h == 1);
        assert!(!sample.is_empty());
        let p = Points::from(&out.run.layers()[0].1);
        for r in colip_ratios(&p, tokens, &sample).unwrap() {
            assert!((r - 2f64.sqrt()).abs() < 1e-5, "{r}");
        }
    }

    #[test]
    fn mode_parse() {
        assert_eq!("hamming-embed".parse::<SynthMode>().unwrap(), SynthMode::HammingEmbed);
        assert!("nope".parse::<SynthMode>().is_err());
    }
}
