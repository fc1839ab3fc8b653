//! Executable activation-based policies for prophet secretary, plus the exact
//! acceptance-probability oracle.
//!
//! A policy assigns every (item, value, time) an activation probability
//! `g_i^v(t)`; the algorithm accepts the first activated arrival. Rate-based
//! policies derive `g` from piecewise-constant activation rates via
//! `g = a(t) * exp(-int_0^t A_i)` with `A_i = E_v[a_i^v]`; the largest item of
//! the main policy uses step activation probabilities directly.

use std::fmt;

use rand::Rng;

use crate::hfn::{h_eval, HQuery};
use crate::instance::{DerivedStats, Instance};

/// Default threshold time of the step-rate policy.
pub const STEP_BETA: f64 = 0.367;

/// Errors from policy construction and the quadrature oracle.
#[derive(Debug)]
pub enum SecretaryError {
    /// The z-selection constraint set is empty; inputs are inconsistent.
    Infeasible { detail: String },
    /// The acceptance-probability quadrature failed to converge.
    QuadratureDivergence { refinements: u32 },
}

impl fmt::Display for SecretaryError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SecretaryError::Infeasible { detail } => write!(f, "z-selection infeasible: {detail}"),
            SecretaryError::QuadratureDivergence { refinements } => {
                write!(f, "quadrature did not converge after {refinements} refinements")
            }
        }
    }
}

impl std::error::Error for SecretaryError {}

/// Per-(item, value) interpolation targets for the main policy.
///
/// The largest item's entries are pinned to `(s*rho - 1)^+ / (s-1)`; every
/// other entry lies in `[(s*rho - 1)^+ / (s-1), rho]` and the probability-
/// weighted sum over the non-largest items equals `h_ot`.
#[derive(Debug, Clone)]
pub struct ZTable {
    z: Vec<Vec<f64>>,
    h0: f64,
    h_ot: f64,
    s: f64,
    largest_item: usize,
}

impl ZTable {
    pub fn z(&self, i: usize, k: usize) -> f64 {
        self.z[i][k]
    }

    /// Activation mass of the largest item: `sum_v p * z` over its support.
    pub fn h0(&self) -> f64 {
        self.h0
    }

    /// Activation mass of the other items: `min(h_s(x0) - h0, 1 - x0)`.
    pub fn h_ot(&self) -> f64 {
        self.h_ot
    }

    pub fn s(&self) -> f64 {
        self.s
    }

    pub fn largest_item(&self) -> usize {
        self.largest_item
    }
}

/// Selects the `z` table: the largest item takes its pinned value, the rest
/// interpolate `low + lambda * (high - low)` with the unique `lambda` in
/// `[0, 1]` that makes the weighted sum hit `h_ot` (`lambda = 0` when the
/// bounds coincide).
pub fn z_select(stats: &DerivedStats, s: f64) -> Result<ZTable, SecretaryError> {
    assert!(s > 1.0, "z_select requires s > 1");
    let i0 = stats.largest_item();
    let x0 = stats.x0();
    let n = stats.len();

    let low = |rho: f64| (s * rho - 1.0).max(0.0) / (s - 1.0);

    let mut h0 = 0.0;
    for k in 0..stats.support_len(i0) {
        h0 += stats.prob(i0, k) * low(stats.rho(i0, k));
    }
    let hs = h_eval(&HQuery::new(s, x0));
    let h_ot = (hs - h0).min(1.0 - x0).max(0.0);

    let mut sum_low = 0.0;
    let mut sum_high = 0.0;
    for i in (0..n).filter(|&i| i != i0) {
        for k in 0..stats.support_len(i) {
            let p = stats.prob(i, k);
            sum_low += p * low(stats.rho(i, k));
            sum_high += p * stats.rho(i, k);
        }
    }
    if sum_low > h_ot + 1e-9 || sum_high < h_ot - 1e-9 {
        return Err(SecretaryError::Infeasible {
            detail: format!("h_ot = {h_ot} outside weighted bounds [{sum_low}, {sum_high}]"),
        });
    }
    let denom = sum_high - sum_low;
    let lambda = if denom > 0.0 {
        ((h_ot - sum_low) / denom).clamp(0.0, 1.0)
    } else {
        0.0
    };

    let mut z = Vec::with_capacity(n);
    for i in 0..n {
        let mut zi = Vec::with_capacity(stats.support_len(i));
        for k in 0..stats.support_len(i) {
            let rho = stats.rho(i, k);
            let lo = low(rho);
            zi.push(if i == i0 { lo } else { lo + lambda * (rho - lo) });
        }
        z.push(zi);
    }
    Ok(ZTable { z, h0, h_ot, s, largest_item: i0 })
}

// ---------------------------------------------------------------------------
// Policies
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
enum ItemRule {
    /// Piecewise-constant activation rates: `g = a(t) e^{-int_0^t A}`.
    Rates,
    /// Piecewise-constant activation probabilities used directly.
    Probs,
}

#[derive(Debug, Clone)]
struct ItemPolicy {
    rule: ItemRule,
    /// Segment boundaries, `0 = b_0 < ... < b_m = 1`.
    breaks: Vec<f64>,
    /// Per value index, one rate or probability per segment.
    table: Vec<Vec<f64>>,
    /// Per segment: `A = E_v[a]` (rates) or `E_v[g]` (probs).
    mean: Vec<f64>,
    /// Cumulative integral of `mean` at each boundary.
    cum: Vec<f64>,
}

impl ItemPolicy {
    fn new(rule: ItemRule, breaks: Vec<f64>, table: Vec<Vec<f64>>, probs: Vec<f64>) -> Self {
        // Drop zero-length segments introduced by coincident thresholds.
        let mut keep_breaks = vec![breaks[0]];
        let mut keep_segs = Vec::new();
        for (seg, w) in breaks.windows(2).enumerate() {
            assert!(w[1] >= w[0], "thresholds must ascend");
            if w[1] > w[0] {
                keep_breaks.push(w[1]);
                keep_segs.push(seg);
            }
        }
        let table: Vec<Vec<f64>> = table
            .into_iter()
            .map(|row| keep_segs.iter().map(|&s| row[s]).collect())
            .collect();
        let segs = keep_breaks.len() - 1;
        let mut mean = vec![0.0; segs];
        for (row, &p) in table.iter().zip(&probs) {
            for (seg, &a) in row.iter().enumerate() {
                mean[seg] += p * a;
            }
        }
        let mut cum = vec![0.0; segs + 1];
        for seg in 0..segs {
            cum[seg + 1] = cum[seg] + mean[seg] * (keep_breaks[seg + 1] - keep_breaks[seg]);
        }
        ItemPolicy { rule, breaks: keep_breaks, table, mean, cum }
    }

    fn segment(&self, t: f64) -> usize {
        let m = self.breaks.len() - 1;
        for seg in 0..m {
            if t < self.breaks[seg + 1] {
                return seg;
            }
        }
        m - 1
    }

    fn g(&self, k: usize, t: f64) -> f64 {
        self.g_in_segment(k, t, self.segment(t))
    }

    /// `g` with the owning segment pinned: at segment boundaries this is the
    /// one-sided limit from within `seg`, which keeps the quadrature's
    /// integrand smooth on each closed segment.
    fn g_in_segment(&self, k: usize, t: f64, seg: usize) -> f64 {
        match self.rule {
            ItemRule::Probs => self.table[k][seg],
            ItemRule::Rates => {
                let cum_a = self.cum[seg] + self.mean[seg] * (t - self.breaks[seg]);
                self.table[k][seg] * (-cum_a).exp()
            }
        }
    }

    /// `int_0^t E_v[g]`: the probability this item activates before `t`.
    fn cum_mean_g(&self, t: f64) -> f64 {
        let seg = self.segment(t);
        let partial = self.cum[seg] + self.mean[seg] * (t - self.breaks[seg]);
        match self.rule {
            ItemRule::Probs => partial,
            ItemRule::Rates => -(-partial).exp_m1(),
        }
    }
}

/// An activation policy: `g_i^v(t)` for every item, value index, and time.
#[derive(Debug, Clone)]
pub struct Policy {
    items: Vec<ItemPolicy>,
    tag: String,
}

impl Policy {
    /// Activation probability of item `i`'s `k`-th value at time `t`.
    pub fn g(&self, i: usize, k: usize, t: f64) -> f64 {
        assert!((0.0..=1.0).contains(&t));
        self.items[i].g(k, t)
    }

    /// Probability item `i` activates before time `t`.
    pub fn activation_before(&self, i: usize, t: f64) -> f64 {
        assert!((0.0..=1.0).contains(&t));
        self.items[i].cum_mean_g(t)
    }

    /// Policy description.
    pub fn tag(&self) -> &str {
        &self.tag
    }

    /// Union of all items' segment boundaries.
    pub fn breakpoints(&self) -> Vec<f64> {
        let mut cuts: Vec<f64> = self.items.iter().flat_map(|ip| ip.breaks.clone()).collect();
        cuts.sort_by(f64::total_cmp);
        cuts.dedup();
        cuts
    }

    fn items_len(&self) -> usize {
        self.items.len()
    }

    /// Sampled check that every `g` stays within `[0, 1]`.
    fn assert_valid(&self) {
        for (i, ip) in self.items.iter().enumerate() {
            for k in 0..ip.table.len() {
                for step in 0..=50 {
                    let t = step as f64 / 50.0;
                    let g = ip.g(k, t);
                    assert!(
                        (-1e-12..=1.0 + 1e-9).contains(&g),
                        "g[{i}][{k}]({t}) = {g} out of range"
                    );
                }
            }
        }
    }
}

/// Constant activation rates `a_i^v = rho_i^v`.
pub fn policy_constant(stats: &DerivedStats) -> Policy {
    let items = (0..stats.len())
        .map(|i| {
            let kmax = stats.support_len(i);
            let table: Vec<Vec<f64>> = (0..kmax).map(|k| vec![stats.rho(i, k)]).collect();
            let probs: Vec<f64> = (0..kmax).map(|k| stats.prob(i, k)).collect();
            ItemPolicy::new(ItemRule::Rates, vec![0.0, 1.0], table, probs)
        })
        .collect();
    let policy = Policy { items, tag: "constant".into() };
    policy.assert_valid();
    policy
}

/// Step activation rates `(2 rho - 1)^+` before `beta`, then
/// `2 rho - (2 rho - 1)^+`.
pub fn policy_step(stats: &DerivedStats, beta: f64) -> Policy {
    assert!((0.0..=1.0).contains(&beta));
    let items = (0..stats.len())
        .map(|i| {
            let kmax = stats.support_len(i);
            let table: Vec<Vec<f64>> = (0..kmax)
                .map(|k| {
                    let rho = stats.rho(i, k);
                    let first = (2.0 * rho - 1.0).max(0.0);
                    vec![first, 2.0 * rho - first]
                })
                .collect();
            let probs: Vec<f64> = (0..kmax).map(|k| stats.prob(i, k)).collect();
            ItemPolicy::new(ItemRule::Rates, vec![0.0, beta, 1.0], table, probs)
        })
        .collect();
    let policy = Policy { items, tag: format!("step(beta={beta})") };
    policy.assert_valid();
    policy
}

/// Step activation rates except the largest item, which uses step activation
/// probabilities `0 / z / s*rho - (s-1)*z` at thresholds `beta0 <= beta2`;
/// other items switch rates `z -> s*rho - (s-1)*z` at `beta1`.
pub fn policy_main(stats: &DerivedStats, zt: &ZTable, betas: (f64, f64, f64)) -> Policy {
    let (b0, b1, b2) = betas;
    assert!(
        0.0 <= b0 && b0 <= b1 && b1 <= b2 && b2 <= 1.0,
        "need 0 <= beta0 <= beta1 <= beta2 <= 1"
    );
    let s = zt.s();
    let i0 = zt.largest_item();
    let items = (0..stats.len())
        .map(|i| {
            let kmax = stats.support_len(i);
            let probs: Vec<f64> = (0..kmax).map(|k| stats.prob(i, k)).collect();
            if i == i0 {
                let table: Vec<Vec<f64>> = (0..kmax)
                    .map(|k| {
                        let rho = stats.rho(i, k);
                        let z = zt.z(i, k);
                        vec![0.0, z, s * rho - (s - 1.0) * z]
                    })
                    .collect();
                ItemPolicy::new(ItemRule::Probs, vec![0.0, b0, b2, 1.0], table, probs)
            } else {
                let table: Vec<Vec<f64>> = (0..kmax)
                    .map(|k| {
                        let rho = stats.rho(i, k);
                        let z = zt.z(i, k);
                        vec![z, s * rho - (s - 1.0) * z]
                    })
                    .collect();
                ItemPolicy::new(ItemRule::Rates, vec![0.0, b1, 1.0], table, probs)
            }
        })
        .collect();
    let policy = Policy { items, tag: format!("main(s={s}, betas=({b0},{b1},{b2}))") };
    policy.assert_valid();
    policy
}

/// Runs one trial: i.i.d. uniform arrival times, values drawn per item, and
/// acceptance of the first activated arrival. Returns the accepted
/// `(item, value index, arrival time)`, if any.
pub fn simulate_once<R: Rng>(
    inst: &Instance,
    policy: &Policy,
    rng: &mut R,
) -> Option<(usize, usize, f64)> {
    let n = inst.len();
    debug_assert_eq!(n, policy.items_len());
    let mut arrivals: Vec<(f64, usize, usize)> = Vec::with_capacity(n);
    for i in 0..n {
        let t: f64 = rng.gen();
        let mut u: f64 = rng.gen();
        let atoms = inst.atoms(i);
        let mut k = atoms.len() - 1;
        for (idx, a) in atoms.iter().enumerate() {
            if u < a.prob {
                k = idx;
                break;
            }
            u -= a.prob;
        }
        arrivals.push((t, i, k));
    }
    arrivals.sort_by(|a, b| a.0.total_cmp(&b.0));
    for (t, i, k) in arrivals {
        if rng.gen::<f64>() < policy.g(i, k, t) {
            return Some((i, k, t));
        }
    }
    None
}

/// Exact acceptance probabilities: for every `(i, v)`, the integral
///
/// ```text
/// int_0^1 p_i^v g_i^v(t) prod_{j != i} (1 - int_0^t E[g_j]) dt
/// ```
///
/// by composite Simpson quadrature over the policy's segments, refined until
/// successive halvings agree to 1e-9 on every entry.
pub fn exact_accept_probs(
    inst: &Instance,
    policy: &Policy,
) -> Result<Vec<Vec<f64>>, SecretaryError> {
    let n = inst.len();
    let cuts = policy.breakpoints();
    let base_nodes: usize = 1 << 14;

    let mut prev: Option<Vec<Vec<f64>>> = None;
    for refinement in 0..=20u32 {
        let scale = 1usize << refinement;
        let mut table: Vec<Vec<f64>> = (0..n).map(|i| vec![0.0; inst.atoms(i).len()]).collect();
        for w in cuts.windows(2) {
            let (a, b) = (w[0], w[1]);
            if b <= a {
                continue;
            }
            // Pin every item's segment from the midpoint so boundary nodes
            // evaluate the segment's smooth piece, not the neighbour's.
            let mid = 0.5 * (a + b);
            let segs: Vec<usize> = policy.items.iter().map(|ip| ip.segment(mid)).collect();
            let mut steps = ((b - a) * (base_nodes * scale) as f64).ceil() as usize;
            steps = steps.max(8);
            if steps % 2 == 1 {
                steps += 1;
            }
            let h = (b - a) / steps as f64;
            for node in 0..=steps {
                let t = a + h * node as f64;
                let weight = simpson_weight(node, steps) * h / 3.0;
                accumulate(inst, policy, &segs, t, weight, &mut table);
            }
        }
        if let Some(prev) = &prev {
            let mut worst: f64 = 0.0;
            for i in 0..n {
                for k in 0..table[i].len() {
                    worst = worst.max((table[i][k] - prev[i][k]).abs());
                }
            }
            if worst <= 1e-9 {
                return Ok(table);
            }
        }
        prev = Some(table);
    }
    Err(SecretaryError::QuadratureDivergence { refinements: 20 })
}

fn simpson_weight(node: usize, steps: usize) -> f64 {
    if node == 0 || node == steps {
        1.0
    } else if node % 2 == 1 {
        4.0
    } else {
        2.0
    }
}

/// Adds `weight * p_i^v g_i^v(t) * prod_{j != i}(1 - C_j(t))` to every entry,
/// using prefix/suffix products for the leave-one-out factor. `segs` pins
/// each item's policy segment for the current quadrature interval.
fn accumulate(
    inst: &Instance,
    policy: &Policy,
    segs: &[usize],
    t: f64,
    weight: f64,
    table: &mut [Vec<f64>],
) {
    let n = inst.len();
    let mut survive = Vec::with_capacity(n);
    for j in 0..n {
        survive.push(1.0 - policy.items[j].cum_mean_g(t));
    }
    let mut prefix = vec![1.0; n + 1];
    for j in 0..n {
        prefix[j + 1] = prefix[j] * survive[j];
    }
    let mut suffix = vec![1.0; n + 1];
    for j in (0..n).rev() {
        suffix[j] = suffix[j + 1] * survive[j];
    }
    for i in 0..n {
        let others = prefix[i] * suffix[i + 1];
        for (k, atom) in inst.atoms(i).iter().enumerate() {
            table[i][k] += weight * atom.prob * policy.items[i].g_in_segment(k, t, segs[i]) * others;
        }
    }
}
