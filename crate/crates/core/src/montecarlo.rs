//! Deterministic parallel trial runner with per-key frequency estimation,
//! confidence intervals, and dominance reports against theoretical bounds.
//!
//! Determinism: trial `t` always draws from a generator seeded with
//! `master_seed + t` (wrapping), and partial sums are merged in a fixed chunk
//! order, so reports are identical for any thread count.

use std::collections::BTreeMap;
use std::fmt;
use std::time::Instant;

use rand::SeedableRng;
use rand_pcg::Pcg64Mcg;
use serde::Serialize;

use crate::instance::Instance;
use crate::matching::{CarAlgorithm, HybridAlgorithm, MamAlgorithm, Matching};
use crate::secretary::{simulate_once, Policy};

/// Acceptance threshold in standard errors for dominance checks.
pub const DOMINANCE_SIGMAS: f64 = 4.0;

/// Number of deterministic merge chunks (independent of the thread count).
const CHUNKS: u64 = 256;

/// One simulation trial outcome: the accepted keys and the collected value.
pub struct TrialOutcome<K> {
    pub keys: Vec<K>,
    pub value: f64,
}

/// A simulation driver the harness can replay under counter-based seeding.
pub trait Runner: Sync {
    type Key: Ord + Clone + Send + Serialize + fmt::Display;

    fn trial(&self, rng: &mut Pcg64Mcg) -> TrialOutcome<Self::Key>;

    /// Benchmark denominator of the aggregate value ratio (prophet value or
    /// offline optimum); 0 disables the ratio.
    fn benchmark(&self) -> f64;
}

/// Frequency and standard error of one key.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct KeyStats {
    pub freq: f64,
    pub se: f64,
}

/// Aggregated simulation estimates.
#[derive(Debug, Clone)]
pub struct TrialReport<K: Ord> {
    pub trials: u64,
    pub seed: u64,
    pub keys: BTreeMap<K, KeyStats>,
    /// Mean collected value per trial.
    pub value_mean: f64,
    /// Standard error of the mean value.
    pub value_se: f64,
    /// Benchmark denominator (prophet value or offline optimum).
    pub benchmark: f64,
    /// `value_mean / benchmark` when the benchmark is positive.
    pub value_ratio: f64,
    /// Wall-clock seconds; not serialized, so emitted reports stay
    /// byte-identical across equally seeded runs.
    pub wall_seconds: f64,
}

impl<K: Ord + fmt::Display> TrialReport<K> {
    pub fn to_json(&self) -> String {
        #[derive(Serialize)]
        struct Flat<'a> {
            trials: u64,
            seed: u64,
            keys: BTreeMap<String, &'a KeyStats>,
            value_mean: f64,
            value_se: f64,
            benchmark: f64,
            value_ratio: f64,
        }
        let flat = Flat {
            trials: self.trials,
            seed: self.seed,
            keys: self.keys.iter().map(|(k, v)| (k.to_string(), v)).collect(),
            value_mean: self.value_mean,
            value_se: self.value_se,
            benchmark: self.benchmark,
            value_ratio: self.value_ratio,
        };
        serde_json::to_string_pretty(&flat).expect("report serialization cannot fail")
    }
}

struct ChunkSums<K> {
    counts: BTreeMap<K, u64>,
    value_sum: f64,
    value_sq_sum: f64,
}

/// Runs `trials` independent simulations and aggregates per-key acceptance
/// frequencies and the value mean. Deterministic for fixed `(master_seed,
/// trials)` regardless of `threads`.
pub fn estimate<R: Runner>(
    runner: &R,
    trials: u64,
    master_seed: u64,
    threads: usize,
) -> TrialReport<R::Key> {
    assert!(trials >= 1, "need at least one trial");
    let started = Instant::now();
    let chunk_count = CHUNKS.min(trials);
    let bounds: Vec<(u64, u64)> = (0..chunk_count)
        .map(|c| (trials * c / chunk_count, trials * (c + 1) / chunk_count))
        .collect();

    let run_chunk = |&(lo, hi): &(u64, u64)| -> ChunkSums<R::Key> {
        let mut counts = BTreeMap::new();
        let mut value_sum = 0.0;
        let mut value_sq_sum = 0.0;
        for t in lo..hi {
            let mut rng = Pcg64Mcg::seed_from_u64(master_seed.wrapping_add(t));
            let outcome = runner.trial(&mut rng);
            for key in outcome.keys {
                *counts.entry(key).or_insert(0) += 1;
            }
            value_sum += outcome.value;
            value_sq_sum += outcome.value * outcome.value;
        }
        ChunkSums { counts, value_sum, value_sq_sum }
    };

    let chunks: Vec<ChunkSums<R::Key>> = if threads > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .expect("thread pool construction");
        pool.install(|| {
            use rayon::prelude::*;
            bounds.par_iter().map(run_chunk).collect()
        })
    } else {
        bounds.iter().map(run_chunk).collect()
    };

    let mut counts: BTreeMap<R::Key, u64> = BTreeMap::new();
    let mut value_sum = 0.0;
    let mut value_sq_sum = 0.0;
    for chunk in chunks {
        for (k, c) in chunk.counts {
            *counts.entry(k).or_insert(0) += c;
        }
        value_sum += chunk.value_sum;
        value_sq_sum += chunk.value_sq_sum;
    }

    let n = trials as f64;
    let keys = counts
        .into_iter()
        .map(|(k, c)| {
            let freq = c as f64 / n;
            let se = (freq * (1.0 - freq) / n).sqrt();
            (k, KeyStats { freq, se })
        })
        .collect();
    let value_mean = value_sum / n;
    let variance = (value_sq_sum / n - value_mean * value_mean).max(0.0);
    let value_se = (variance / n).sqrt();
    let benchmark = runner.benchmark();
    TrialReport {
        trials,
        seed: master_seed,
        keys,
        value_mean,
        value_se,
        benchmark,
        value_ratio: if benchmark > 0.0 { value_mean / benchmark } else { 0.0 },
        wall_seconds: started.elapsed().as_secs_f64(),
    }
}

/// One dominance-check row: passes when `freq >= bound - 4 se`.
#[derive(Debug, Clone, Serialize)]
pub struct DominanceRow<K: Serialize> {
    pub key: K,
    pub freq: f64,
    pub se: f64,
    pub bound: f64,
    /// `freq - (bound - 4 se)`; non-negative rows pass.
    pub margin: f64,
    pub passed: bool,
}

/// Per-key comparison of empirical frequencies against theoretical bounds.
#[derive(Debug, Clone, Serialize)]
pub struct DominanceReport<K: Serialize> {
    pub rows: Vec<DominanceRow<K>>,
    pub passed: bool,
}

impl<K: Serialize + fmt::Display> DominanceReport<K> {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialization cannot fail")
    }

    /// CSV rows `key,freq,se,bound,margin`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("key,freq,se,bound,margin\n");
        for row in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                row.key, row.freq, row.se, row.bound, row.margin
            ));
        }
        out
    }
}

/// Compares the report's frequencies against `bounds`, flagging every key
/// whose frequency falls more than [`DOMINANCE_SIGMAS`] standard errors below
/// its bound.
pub fn dominance_report<K: Ord + Clone + Serialize + fmt::Display>(
    report: &TrialReport<K>,
    bounds: &BTreeMap<K, f64>,
) -> DominanceReport<K> {
    let mut rows = Vec::with_capacity(bounds.len());
    let mut passed = true;
    for (key, &bound) in bounds {
        let (freq, se) = report
            .keys
            .get(key)
            .map_or((0.0, 0.0), |stats| (stats.freq, stats.se));
        let margin = freq - (bound - DOMINANCE_SIGMAS * se);
        let ok = margin >= 0.0;
        passed &= ok;
        rows.push(DominanceRow { key: key.clone(), freq, se, bound, margin, passed: ok });
    }
    DominanceReport { rows, passed }
}

// ---------------------------------------------------------------------------
// Runner adapters
// ---------------------------------------------------------------------------

/// Key for secretary outcomes: item and value index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub struct PairKey {
    pub item: usize,
    pub value_idx: usize,
}

impl fmt::Display for PairKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.item, self.value_idx)
    }
}

/// Key for matching outcomes: online vertex, offline vertex, and type.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub struct EdgeKey {
    pub i: usize,
    pub u: usize,
    pub v: usize,
}

impl fmt::Display for EdgeKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}:{}", self.i, self.u, self.v)
    }
}

/// Runs a secretary policy over an instance; the value is the accepted item's
/// value and the benchmark is the prophet.
pub struct PolicyRunner<'a> {
    pub inst: &'a Instance,
    pub policy: &'a Policy,
    pub prophet: f64,
}

impl Runner for PolicyRunner<'_> {
    type Key = PairKey;

    fn trial(&self, rng: &mut Pcg64Mcg) -> TrialOutcome<PairKey> {
        match simulate_once(self.inst, self.policy, rng) {
            Some((item, value_idx, _)) => TrialOutcome {
                value: self.inst.atoms(item)[value_idx].value,
                keys: vec![PairKey { item, value_idx }],
            },
            None => TrialOutcome { keys: Vec::new(), value: 0.0 },
        }
    }

    fn benchmark(&self) -> f64 {
        self.prophet
    }
}

/// Which matching algorithm a [`MatchRunner`] drives.
pub enum MatchAlgorithm {
    Mam(MamAlgorithm),
    Car(CarAlgorithm),
    Hybrid(HybridAlgorithm),
}

/// Runs a matching algorithm on a 1-regular (padded) instance, reporting only
/// edges among the original vertices; the benchmark is the offline optimum.
pub struct MatchRunner {
    pub algorithm: MatchAlgorithm,
    /// Original (pre-padding) vertex counts; dummy edges are dropped from the
    /// per-key counts (their weight contribution is zero anyway).
    pub original_online: usize,
    pub original_offline: usize,
    pub benchmark: f64,
}

impl MatchRunner {
    fn run(&self, rng: &mut Pcg64Mcg) -> Matching {
        match &self.algorithm {
            MatchAlgorithm::Mam(alg) => alg.run(rng),
            MatchAlgorithm::Car(alg) => alg.run(rng),
            MatchAlgorithm::Hybrid(alg) => alg.run(rng),
        }
    }
}

impl Runner for MatchRunner {
    type Key = EdgeKey;

    fn trial(&self, rng: &mut Pcg64Mcg) -> TrialOutcome<EdgeKey> {
        let matching = self.run(rng);
        let keys = matching
            .edges
            .iter()
            .filter(|&&(u, i, _)| u < self.original_offline && i < self.original_online)
            .map(|&(u, i, v)| EdgeKey { i, u, v })
            .collect();
        TrialOutcome { keys, value: matching.weight }
    }

    fn benchmark(&self) -> f64 {
        self.benchmark
    }
}
