//! Viewpoint-adaptive reference selection.
//!
//! Candidates are drawn without replacement with probability proportional to
//! their current weight. After each draw, every remaining candidate whose
//! viewpoint lies within `delta` of the drawn one has its weight multiplied
//! by `gamma`, which pushes later draws toward unseen viewpoints.

use std::collections::BTreeMap;
use std::f64::consts::{PI, TAU};
use std::io::BufRead;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SplitRng;

pub const MAX_DRAWS: usize = 5;
pub const MAX_ENUMERATION_POOL: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Region {
    Face,
    Body,
}

/// Training-data subset an episode is drawn from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Subset {
    A,
    B,
    C,
}

impl Subset {
    /// Relative episode frequency.
    pub fn ratio(self) -> u32 {
        match self {
            Subset::A => 5,
            Subset::B => 2,
            Subset::C => 1,
        }
    }

    /// Draws a subset with probability proportional to [`Subset::ratio`].
    pub fn draw(rng: &mut SplitRng) -> Subset {
        match rng.below(8) {
            0..=4 => Subset::A,
            5..=6 => Subset::B,
            _ => Subset::C,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Candidate {
    pub id: String,
    /// Viewpoint in `[0, 2π)`.
    pub theta: f64,
    pub region: Region,
    pub weight: f64,
}

impl Candidate {
    /// A candidate with unit weight; `theta` is wrapped into `[0, 2π)`.
    pub fn new(id: impl Into<String>, theta: f64, region: Region) -> Result<Self> {
        if !theta.is_finite() {
            return Err(Error::Domain(format!(
                "viewpoint angle {theta} is not finite"
            )));
        }
        let mut theta = theta.rem_euclid(TAU);
        if theta >= TAU {
            theta = 0.0;
        }
        Ok(Self {
            id: id.into(),
            theta,
            region,
            weight: 1.0,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerConfig {
    pub delta: f64,
    pub gamma: f64,
    pub draws: usize,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            delta: PI / 6.0,
            gamma: 0.5,
            draws: 3,
        }
    }
}

impl SamplerConfig {
    /// `gamma = 1` and `delta = 0` both disable suppression and are accepted
    /// so that plain weighted sampling can be expressed.
    pub fn validate(&self) -> Result<()> {
        if !(self.delta >= 0.0 && self.delta.is_finite()) {
            return Err(Error::Config(format!(
                "delta {} must be finite and >= 0",
                self.delta
            )));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::Config(format!(
                "gamma {} must lie in (0, 1]",
                self.gamma
            )));
        }
        if self.draws > MAX_DRAWS {
            return Err(Error::Config(format!(
                "draws {} exceeds {MAX_DRAWS}",
                self.draws
            )));
        }
        Ok(())
    }
}

/// `min(|a−b|, 2π−|a−b|)` for angles in `[0, 2π)`.
pub fn angular_distance(a: f64, b: f64) -> f64 {
    let d = (a - b).abs().rem_euclid(TAU);
    d.min(TAU - d)
}

/// Multiplies by `gamma` the weight of every candidate strictly within
/// `delta` of `selected_theta`. Other weights are left untouched.
pub fn suppress(pool: &mut [Candidate], selected_theta: f64, cfg: &SamplerConfig) {
    for c in pool.iter_mut() {
        if angular_distance(selected_theta, c.theta) < cfg.delta {
            c.weight *= cfg.gamma;
        }
    }
}

fn weighted_index(weights: impl Iterator<Item = f64> + Clone, rng: &mut SplitRng) -> usize {
    let total: f64 = weights.clone().sum();
    let target = rng.uniform() * total;
    let mut acc = 0.0;
    let mut last = 0;
    for (i, w) in weights.enumerate() {
        acc += w;
        last = i;
        if target < acc {
            return i;
        }
    }
    last
}

/// Indices into `candidates` in draw order. Weights start from each
/// candidate's `weight` field and are local to this call.
pub fn draw_indices(
    candidates: &[Candidate],
    cfg: &SamplerConfig,
    rng: &mut SplitRng,
) -> Result<Vec<usize>> {
    if cfg.draws > candidates.len() {
        return Err(Error::Request(format!(
            "{} draws requested from a pool of {}",
            cfg.draws,
            candidates.len()
        )));
    }
    if let Some(c) = candidates
        .iter()
        .find(|c| !(c.weight > 0.0 && c.weight.is_finite()))
    {
        return Err(Error::Domain(format!(
            "candidate {} has weight {}",
            c.id, c.weight
        )));
    }
    let mut pool: Vec<Candidate> = candidates.to_vec();
    let mut origin: Vec<usize> = (0..candidates.len()).collect();
    let mut out = Vec::with_capacity(cfg.draws);
    for _ in 0..cfg.draws {
        let pick = weighted_index(pool.iter().map(|c| c.weight), rng);
        let chosen = pool.remove(pick);
        out.push(origin.remove(pick));
        suppress(&mut pool, chosen.theta, cfg);
    }
    Ok(out)
}

/// Draws `cfg.draws` references in draw order.
pub fn draw_references(
    candidates: &[Candidate],
    cfg: &SamplerConfig,
    rng: &mut SplitRng,
) -> Result<Vec<Candidate>> {
    cfg.validate()?;
    Ok(draw_indices(candidates, cfg, rng)?
        .into_iter()
        .map(|i| candidates[i].clone())
        .collect())
}

fn ratio(x: f64) -> Result<BigRational> {
    BigRational::from_float(x)
        .ok_or_else(|| Error::Domain(format!("{x} has no exact rational form")))
}

/// Exact probability of each selection set (sorted candidate indices),
/// summed over every ordered draw sequence with rational weights.
pub fn enumerate_exact(
    candidates: &[Candidate],
    cfg: &SamplerConfig,
) -> Result<BTreeMap<Vec<usize>, BigRational>> {
    if candidates.len() > MAX_ENUMERATION_POOL {
        return Err(Error::OracleScope(format!(
            "enumeration supports pools of at most {MAX_ENUMERATION_POOL}, got {}",
            candidates.len()
        )));
    }
    if cfg.draws > candidates.len() {
        return Err(Error::Request(format!(
            "{} draws requested from a pool of {}",
            cfg.draws,
            candidates.len()
        )));
    }
    let gamma = ratio(cfg.gamma)?;
    let weights = candidates
        .iter()
        .map(|c| ratio(c.weight))
        .collect::<Result<Vec<_>>>()?;
    let mut out = BTreeMap::new();
    let mut chosen = Vec::with_capacity(cfg.draws);
    recurse(
        candidates,
        cfg,
        &gamma,
        weights,
        &mut chosen,
        BigRational::one(),
        &mut out,
    );
    Ok(out)
}

fn recurse(
    candidates: &[Candidate],
    cfg: &SamplerConfig,
    gamma: &BigRational,
    weights: Vec<BigRational>,
    chosen: &mut Vec<usize>,
    prob: BigRational,
    out: &mut BTreeMap<Vec<usize>, BigRational>,
) {
    if chosen.len() == cfg.draws {
        let mut key = chosen.clone();
        key.sort_unstable();
        let slot = out.entry(key).or_insert_with(BigRational::zero);
        *slot += prob;
        return;
    }
    let total: BigRational = (0..candidates.len())
        .filter(|i| !chosen.contains(i))
        .fold(BigRational::zero(), |acc, i| acc + &weights[i]);
    for i in 0..candidates.len() {
        if chosen.contains(&i) {
            continue;
        }
        let p = &prob * &weights[i] / &total;
        let mut next = weights.clone();
        for (j, w) in next.iter_mut().enumerate() {
            if j != i
                && !chosen.contains(&j)
                && angular_distance(candidates[i].theta, candidates[j].theta) < cfg.delta
            {
                *w = &*w * gamma;
            }
        }
        chosen.push(i);
        recurse(candidates, cfg, gamma, next, chosen, p, out);
        chosen.pop();
    }
}

/// [`enumerate_exact`] rounded to `f64`.
pub fn enumerate_distribution(
    candidates: &[Candidate],
    cfg: &SamplerConfig,
) -> Result<BTreeMap<Vec<usize>, f64>> {
    Ok(enumerate_exact(candidates, cfg)?
        .into_iter()
        .map(|(k, v)| (k, v.to_f64().unwrap_or(f64::NAN)))
        .collect())
}

/// Exact rational `1/n` helper used by callers comparing against uniform
/// oracles.
pub fn uniform_probability(n: u64) -> BigRational {
    BigRational::new(BigInt::one(), BigInt::from(n))
}

/// One sampling episode: an independent draw count in `0..=MAX_DRAWS` for
/// each region, capped by the pool size.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Episode {
    pub faces: Vec<Candidate>,
    pub bodies: Vec<Candidate>,
}

pub fn sample_episode(
    face_pool: &[Candidate],
    body_pool: &[Candidate],
    cfg: &SamplerConfig,
    rng: &mut SplitRng,
) -> Result<Episode> {
    let mut faces_rng = rng.split();
    let mut bodies_rng = rng.split();
    let draw = |pool: &[Candidate], r: &mut SplitRng| {
        let n = r.below(MAX_DRAWS + 1).min(pool.len());
        draw_references(pool, &SamplerConfig { draws: n, ..*cfg }, r)
    };
    Ok(Episode {
        faces: draw(face_pool, &mut faces_rng)?,
        bodies: draw(body_pool, &mut bodies_rng)?,
    })
}

/// One line of a candidate pool file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CandidateRecord {
    pub id: String,
    pub theta: f64,
    pub region: Region,
    pub subset: Subset,
}

impl CandidateRecord {
    pub fn to_candidate(&self) -> Result<Candidate> {
        Candidate::new(self.id.clone(), self.theta, self.region)
    }
}

/// Reads JSONL candidate records; blank lines are skipped.
pub fn read_candidates(reader: impl BufRead) -> Result<Vec<CandidateRecord>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: CandidateRecord = serde_json::from_str(&line).map_err(|e| Error::Record {
            line: i + 1,
            detail: e.to_string(),
        })?;
        if !rec.theta.is_finite() {
            return Err(Error::Record {
                line: i + 1,
                detail: format!("theta {} is not finite", rec.theta),
            });
        }
        out.push(rec);
    }
    Ok(out)
}
