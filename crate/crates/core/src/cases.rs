//! Modal-incomplete cases: non-empty subsets of the available modalities.
//!
//! Every supported pool policy is a union of "popcount levels" (all cases
//! with exactly `s` modalities present), so a pool never has to be
//! materialized to be sampled from: indices are drawn uniformly and unranked
//! into masks directly.

use std::cmp::Ordering;
use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAX_MODALITIES: usize = 16;

/// A non-empty subset of `M` modalities, stored as a bit set.
///
/// Serializes as its presence string (see [`ModalityCase::bits`]).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ModalityCase {
    mask: u16,
    modalities: u8,
}

impl ModalityCase {
    pub fn new(mask: u16, modalities: usize) -> Result<Self> {
        check_modalities(modalities)?;
        if mask == 0 {
            return Err(Error::invalid("a case needs at least one modality"));
        }
        if modalities < MAX_MODALITIES && (mask >> modalities) != 0 {
            return Err(Error::invalid(format!(
                "mask {mask:#b} references modalities beyond {modalities}"
            )));
        }
        Ok(ModalityCase {
            mask,
            modalities: modalities as u8,
        })
    }

    pub fn from_members(members: &[usize], modalities: usize) -> Result<Self> {
        let mut mask = 0u16;
        for &m in members {
            if m >= modalities {
                return Err(Error::invalid(format!("modality {m} out of range for {modalities}")));
            }
            mask |= 1 << m;
        }
        ModalityCase::new(mask, modalities)
    }

    pub fn full(modalities: usize) -> Result<Self> {
        check_modalities(modalities)?;
        ModalityCase::new(full_mask(modalities), modalities)
    }

    pub fn mask(&self) -> u16 {
        self.mask
    }

    pub fn modalities(&self) -> usize {
        self.modalities as usize
    }

    // A case always has at least one member, so there is no `is_empty`.
    #[allow(clippy::len_without_is_empty)]
    pub fn len(&self) -> usize {
        self.mask.count_ones() as usize
    }

    /// Number of absent modalities.
    pub fn missing(&self) -> usize {
        self.modalities() - self.len()
    }

    pub fn is_full(&self) -> bool {
        self.missing() == 0
    }

    pub fn contains(&self, modality: usize) -> bool {
        modality < self.modalities() && self.mask & (1 << modality) != 0
    }

    /// Present modality indices, ascending.
    pub fn members(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.modalities()).filter(move |&i| self.contains(i))
    }

    /// Presence string, one character per modality: `"101"` is modalities 0 and 2 of 3.
    pub fn bits(&self) -> String {
        (0..self.modalities())
            .map(|i| if self.contains(i) { '1' } else { '0' })
            .collect()
    }

    pub fn parse_bits(s: &str) -> Result<Self> {
        let modalities = s.len();
        let mut mask = 0u16;
        for (i, c) in s.chars().enumerate() {
            match c {
                '1' => mask |= 1 << i,
                '0' => {}
                _ => return Err(Error::invalid(format!("bad case string {s:?}"))),
            }
        }
        ModalityCase::new(mask, modalities)
    }
}

/// Lexicographic order of the ascending member lists: `{0} < {0,1} < {0,1,2} < {0,2} < {1}`.
impl Ord for ModalityCase {
    fn cmp(&self, other: &Self) -> Ordering {
        self.modalities
            .cmp(&other.modalities)
            .then_with(|| self.members().cmp(other.members()))
    }
}

impl PartialOrd for ModalityCase {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for ModalityCase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.bits())
    }
}

impl Serialize for ModalityCase {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.bits())
    }
}

impl<'de> Deserialize<'de> for ModalityCase {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        ModalityCase::parse_bits(&s).map_err(serde::de::Error::custom)
    }
}

fn check_modalities(m: usize) -> Result<()> {
    if (1..=MAX_MODALITIES).contains(&m) {
        Ok(())
    } else {
        Err(Error::invalid(format!(
            "modality count must be in 1..={MAX_MODALITIES}, got {m}"
        )))
    }
}

fn full_mask(m: usize) -> u16 {
    if m == MAX_MODALITIES {
        u16::MAX
    } else {
        (1u16 << m) - 1
    }
}

/// Which cases are eligible for sampling.
///
/// Text form: `all`, `full`, `missing<d>` (e.g. `missing2`), or a
/// comma-joined union such as `missing1,full`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PoolPolicy {
    All,
    Full,
    MissingExactly(usize),
    Union(Vec<PoolPolicy>),
}

impl PoolPolicy {
    /// Case sizes (present-modality counts) selected by the policy.
    fn sizes(&self, m: usize) -> BTreeSet<usize> {
        match self {
            PoolPolicy::All => (1..=m).collect(),
            PoolPolicy::Full => [m].into(),
            PoolPolicy::MissingExactly(d) if *d < m => [m - d].into(),
            PoolPolicy::MissingExactly(_) => BTreeSet::new(),
            PoolPolicy::Union(ps) => ps.iter().flat_map(|p| p.sizes(m)).collect(),
        }
    }
}

impl fmt::Display for PoolPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PoolPolicy::All => f.write_str("all"),
            PoolPolicy::Full => f.write_str("full"),
            PoolPolicy::MissingExactly(d) => write!(f, "missing{d}"),
            PoolPolicy::Union(ps) => {
                for (i, p) in ps.iter().enumerate() {
                    if i > 0 {
                        f.write_str(",")?;
                    }
                    write!(f, "{p}")?;
                }
                Ok(())
            }
        }
    }
}

impl FromStr for PoolPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(',').map(str::trim).collect();
        if parts.len() > 1 {
            return parts
                .iter()
                .map(|p| p.parse())
                .collect::<Result<Vec<_>>>()
                .map(PoolPolicy::Union);
        }
        match parts[0] {
            "all" => Ok(PoolPolicy::All),
            "full" => Ok(PoolPolicy::Full),
            p => p
                .strip_prefix("missing")
                .and_then(|d| d.parse().ok())
                .map(PoolPolicy::MissingExactly)
                .ok_or_else(|| Error::invalid(format!("unknown pool policy {p:?}"))),
        }
    }
}

impl Serialize for PoolPolicy {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for PoolPolicy {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

fn binomial(n: usize, k: usize) -> u64 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    (0..k).fold(1u64, |acc, i| acc * (n - i) as u64 / (i + 1) as u64)
}

/// The `rank`-th `size`-subset of `0..m` in colexicographic order.
fn unrank_combination(m: usize, size: usize, mut rank: u64) -> u16 {
    let mut mask = 0u16;
    for slot in (1..=size).rev() {
        // Largest element c with C(c, slot) <= rank.
        let mut c = slot - 1;
        while c + 1 < m && binomial(c + 1, slot) <= rank {
            c += 1;
        }
        mask |= 1 << c;
        rank -= binomial(c, slot);
    }
    mask
}

/// A pool resolved against a modality count, indexable without enumeration.
#[derive(Debug, Clone)]
pub struct CasePool {
    modalities: usize,
    /// Included sizes with their cumulative index offsets.
    levels: Vec<(usize, u64)>,
    len: u64,
}

impl CasePool {
    pub fn new(policy: &PoolPolicy, modalities: usize) -> Result<Self> {
        Self::from_sizes(policy.sizes(modalities), modalities)
            .map_err(|_| Error::invalid(format!("pool {policy} is empty for {modalities} modalities")))
    }

    fn from_sizes(sizes: BTreeSet<usize>, modalities: usize) -> Result<Self> {
        check_modalities(modalities)?;
        let mut levels = Vec::with_capacity(sizes.len());
        let mut len = 0;
        for s in sizes {
            levels.push((s, len));
            len += binomial(modalities, s);
        }
        if len == 0 {
            return Err(Error::invalid("empty pool"));
        }
        Ok(CasePool {
            modalities,
            levels,
            len,
        })
    }

    pub fn len(&self) -> u64 {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn contains_full(&self) -> bool {
        self.levels.iter().any(|&(s, _)| s == self.modalities)
    }

    /// The pool with the full case removed (and the full case added when
    /// `with_full`).
    fn with_full(&self, with_full: bool) -> Option<Self> {
        let mut sizes: BTreeSet<usize> = self.levels.iter().map(|&(s, _)| s).collect();
        if with_full {
            sizes.insert(self.modalities);
        } else {
            sizes.remove(&self.modalities);
        }
        Self::from_sizes(sizes, self.modalities).ok()
    }

    pub fn contains(&self, case: &ModalityCase) -> bool {
        case.modalities() == self.modalities && self.levels.iter().any(|&(s, _)| s == case.len())
    }

    /// The `index`-th case; order is by size, then colexicographic within a size.
    pub fn nth(&self, index: u64) -> Option<ModalityCase> {
        if index >= self.len {
            return None;
        }
        let &(size, offset) = self.levels.iter().rev().find(|&&(_, off)| off <= index)?;
        let mask = unrank_combination(self.modalities, size, index - offset);
        Some(ModalityCase {
            mask,
            modalities: self.modalities as u8,
        })
    }

    /// Every case in the pool, sorted lexicographically.
    pub fn enumerate(&self) -> Vec<ModalityCase> {
        let mut out: Vec<_> = (0..self.len).filter_map(|i| self.nth(i)).collect();
        out.sort();
        out
    }
}

/// All cases selected by `policy` for `modalities` modalities, sorted and
/// duplicate-free.
pub fn enumerate_cases(modalities: usize, policy: &PoolPolicy) -> Result<Vec<ModalityCase>> {
    Ok(CasePool::new(policy, modalities)?.enumerate())
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerConfig {
    /// Cases drawn per iteration.
    pub k: usize,
    pub pool: PoolPolicy,
    /// Always include the full-modality case; it counts toward `k`.
    #[serde(default = "default_true")]
    pub include_full: bool,
    #[serde(default)]
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            k: 5,
            pool: PoolPolicy::All,
            include_full: true,
            seed: 0,
        }
    }
}

impl SamplerConfig {
    /// The pool cases are actually drawn from: the configured pool, plus the
    /// full case when `include_full` is set.
    pub fn effective_pool(&self, modalities: usize) -> Result<CasePool> {
        let pool = CasePool::new(&self.pool, modalities)?;
        Ok(if self.include_full {
            pool.with_full(true).expect("adding a level keeps the pool non-empty")
        } else {
            pool
        })
    }

    /// Full check for training use: pairs need `k >= 2`.
    pub fn validate(&self, modalities: usize) -> Result<()> {
        if self.k < 2 {
            return Err(Error::invalid(format!(
                "sampler k must be at least 2 to form gradient pairs, got {}",
                self.k
            )));
        }
        self.validate_draw(modalities)
    }

    /// Checks only that `k` cases can be drawn from the pool.
    pub fn validate_draw(&self, modalities: usize) -> Result<()> {
        let pool = self.effective_pool(modalities)?;
        if self.k == 0 {
            return Err(Error::invalid("sampler k must be positive"));
        }
        if self.k as u64 > pool.len() {
            return Err(Error::invalid(format!(
                "sampler k = {} exceeds the {} cases in pool {}{}",
                self.k,
                pool.len(),
                self.pool,
                if self.include_full { " (+full)" } else { "" }
            )));
        }
        Ok(())
    }
}

/// Draws `cfg.k` distinct cases for iteration `draw_index`.
///
/// The result is a pure function of `(cfg, modalities, draw_index)` and is
/// returned in lexicographic order.
pub fn sample_cases(cfg: &SamplerConfig, modalities: usize, draw_index: u64) -> Result<Vec<ModalityCase>> {
    cfg.validate_draw(modalities)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(draw_index);

    let pool = cfg.effective_pool(modalities)?;
    let mut out = Vec::with_capacity(cfg.k);
    let (source, wanted) = if cfg.include_full {
        out.push(ModalityCase::full(modalities)?);
        (pool.with_full(false), cfg.k - 1)
    } else {
        (Some(pool), cfg.k)
    };
    if wanted > 0 {
        let source = source.expect("k - 1 > 0 cases requested from a pool checked to hold them");
        let n = usize::try_from(source.len()).map_err(|_| Error::invalid("pool too large"))?;
        for i in rand::seq::index::sample(&mut rng, n, wanted) {
            out.push(source.nth(i as u64).expect("index below pool length"));
        }
    }
    out.sort();
    Ok(out)
}

/// Stateful wrapper that advances the draw index on every call.
#[derive(Debug, Clone)]
pub struct CaseSampler {
    cfg: SamplerConfig,
    modalities: usize,
    draws: u64,
}

impl CaseSampler {
    pub fn new(cfg: SamplerConfig, modalities: usize) -> Result<Self> {
        cfg.validate(modalities)?;
        Ok(CaseSampler {
            cfg,
            modalities,
            draws: 0,
        })
    }

    pub fn draws(&self) -> u64 {
        self.draws
    }

    pub fn next_cases(&mut self) -> Result<Vec<ModalityCase>> {
        let out = sample_cases(&self.cfg, self.modalities, self.draws)?;
        self.draws += 1;
        Ok(out)
    }
}
