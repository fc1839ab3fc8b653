//! Prophet secretary matching: the type graph and LP-solution model, the LP
//! feasibility checker, 1-regular normalization, correlated interval sampling,
//! the Multistage Activation-based Matching (MAM) and Constant Activation Rate
//! except One Large Vertex (CAR) algorithms with their ratio curves, and the
//! brute-force offline benchmark.

use std::collections::BTreeMap;
use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::hfn::{h_eval, HQuery};

/// MAM first-stage threshold.
pub const MAM_BETA0: f64 = 0.05;
/// MAM third-stage threshold.
pub const MAM_BETA1: f64 = 0.75;
/// Hybrid algorithm's probability of running MAM (else CAR).
pub const HYBRID_MAM_PROB: f64 = 0.8;
/// Competitive ratio of the hybrid algorithm.
pub const HYBRID_TARGET: f64 = 0.641;

/// Errors for matching instances and algorithms.
#[derive(Debug)]
pub enum MatchingError {
    /// Input was not valid JSON for the matching schema.
    Schema(String),
    /// A validation failure with a description.
    Invalid(String),
    /// Enumeration caps exceeded (LP subset check or brute force).
    SizeCap { detail: String },
}

impl fmt::Display for MatchingError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MatchingError::Schema(msg) => write!(f, "matching schema violation: {msg}"),
            MatchingError::Invalid(msg) => write!(f, "invalid matching instance: {msg}"),
            MatchingError::SizeCap { detail } => write!(f, "size cap exceeded: {detail}"),
        }
    }
}

impl std::error::Error for MatchingError {}

/// A violated LP constraint.
#[derive(Debug, Clone, PartialEq)]
pub enum LpViolation {
    /// `sum_u x_i^{(u,v)} > p_i^v` for the reported pair.
    PairCap { i: usize, v: usize, lhs: f64, rhs: f64 },
    /// The subset constraint for offline vertex `u` and type set `mask`.
    SubsetCap { u: usize, mask: u32, lhs: f64, rhs: f64 },
}

impl fmt::Display for LpViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LpViolation::PairCap { i, v, lhs, rhs } => {
                write!(f, "pair constraint violated at (i={i}, v={v}): {lhs} > {rhs}")
            }
            LpViolation::SubsetCap { u, mask, lhs, rhs } => {
                write!(f, "subset constraint violated at u={u}, S={mask:#b}: {lhs} > {rhs}")
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Instance model
// ---------------------------------------------------------------------------

/// Edge-weighted bipartite type graph: offline vertices `0..offline`, type ids
/// `0..types`, and one type distribution per online vertex.
#[derive(Debug, Clone, PartialEq)]
pub struct TypeGraph {
    offline: usize,
    types: usize,
    /// Per online vertex: `(type id, probability)` pairs, probs summing to 1.
    online: Vec<Vec<(usize, f64)>>,
    /// `weights[u][v] >= 0`.
    weights: Vec<Vec<f64>>,
}

impl TypeGraph {
    pub fn new(
        offline: usize,
        types: usize,
        online: Vec<Vec<(usize, f64)>>,
        weights: Vec<Vec<f64>>,
    ) -> Result<Self, MatchingError> {
        if offline == 0 || types == 0 || online.is_empty() {
            return Err(MatchingError::Invalid("graph must be non-empty".into()));
        }
        if weights.len() != offline || weights.iter().any(|row| row.len() != types) {
            return Err(MatchingError::Invalid("weight table shape mismatch".into()));
        }
        for (u, row) in weights.iter().enumerate() {
            for (v, &w) in row.iter().enumerate() {
                if !(w >= 0.0) {
                    return Err(MatchingError::Invalid(format!(
                        "negative weight at (u={u}, v={v})"
                    )));
                }
            }
        }
        for (i, dist) in online.iter().enumerate() {
            if dist.is_empty() {
                return Err(MatchingError::Invalid(format!("online vertex {i} has no types")));
            }
            let mut sum = 0.0;
            for &(v, p) in dist {
                if v >= types {
                    return Err(MatchingError::Invalid(format!(
                        "online vertex {i} references unknown type {v}"
                    )));
                }
                if !(p > 0.0) {
                    return Err(MatchingError::Invalid(format!(
                        "online vertex {i} has non-positive probability"
                    )));
                }
                sum += p;
            }
            if (sum - 1.0).abs() > 1e-9 {
                return Err(MatchingError::Invalid(format!(
                    "online vertex {i}: type probabilities sum to {sum}"
                )));
            }
        }
        Ok(TypeGraph { offline, types, online, weights })
    }

    pub fn offline_len(&self) -> usize {
        self.offline
    }

    pub fn types_len(&self) -> usize {
        self.types
    }

    pub fn online_len(&self) -> usize {
        self.online.len()
    }

    /// Probability that online vertex `i` has type `v`.
    pub fn prob(&self, i: usize, v: usize) -> f64 {
        self.online[i]
            .iter()
            .find(|&&(t, _)| t == v)
            .map_or(0.0, |&(_, p)| p)
    }

    /// Type distribution of online vertex `i`.
    pub fn dist(&self, i: usize) -> &[(usize, f64)] {
        &self.online[i]
    }

    pub fn weight(&self, u: usize, v: usize) -> f64 {
        self.weights[u][v]
    }
}

/// A fractional matching table `x[i][u][v] >= 0` over the type graph.
#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    x: Vec<Vec<Vec<f64>>>,
}

impl LpSolution {
    pub fn new(graph: &TypeGraph, x: Vec<Vec<Vec<f64>>>) -> Result<Self, MatchingError> {
        if x.len() != graph.online_len()
            || x.iter().any(|per_u| {
                per_u.len() != graph.offline_len()
                    || per_u.iter().any(|per_v| per_v.len() != graph.types_len())
            })
        {
            return Err(MatchingError::Invalid("x table shape mismatch".into()));
        }
        for (i, per_u) in x.iter().enumerate() {
            for per_v in per_u {
                for (v, &val) in per_v.iter().enumerate() {
                    if !(val >= 0.0) {
                        return Err(MatchingError::Invalid(format!(
                            "negative x at (i={i}, v={v})"
                        )));
                    }
                }
            }
        }
        Ok(LpSolution { x })
    }

    pub fn zero(graph: &TypeGraph) -> Self {
        LpSolution {
            x: vec![vec![vec![0.0; graph.types_len()]; graph.offline_len()]; graph.online_len()],
        }
    }

    pub fn get(&self, i: usize, u: usize, v: usize) -> f64 {
        self.x[i][u][v]
    }

    pub fn set(&mut self, i: usize, u: usize, v: usize, val: f64) {
        self.x[i][u][v] = val;
    }

    /// `x_i^u = sum_v x_i^{(u,v)}`.
    pub fn mass(&self, i: usize, u: usize) -> f64 {
        self.x[i][u].iter().sum()
    }

    /// `x^u = max_i x_i^u`.
    pub fn x_u(&self, u: usize) -> f64 {
        (0..self.x.len()).map(|i| self.mass(i, u)).fold(0.0, f64::max)
    }

    /// The most important online neighbor of `u`: `argmax_i x_i^u`, smallest
    /// index on ties.
    pub fn i_u(&self, u: usize) -> usize {
        let mut best = 0;
        let mut best_mass = f64::NEG_INFINITY;
        for i in 0..self.x.len() {
            let m = self.mass(i, u);
            if m > best_mass {
                best_mass = m;
                best = i;
            }
        }
        best
    }

    /// `rho_i^{(u,v)} = x_i^{(u,v)} / p_i^v` (zero when the type is absent).
    pub fn rho(&self, graph: &TypeGraph, i: usize, u: usize, v: usize) -> f64 {
        let p = graph.prob(i, v);
        if p > 0.0 {
            self.x[i][u][v] / p
        } else {
            0.0
        }
    }

    /// `h_u = sum_{i,v} (2 x_i^{(u,v)} - p_i^v)^+`.
    pub fn h_u(&self, graph: &TypeGraph, u: usize) -> f64 {
        let mut total = 0.0;
        for i in 0..graph.online_len() {
            for &(v, p) in graph.dist(i) {
                total += (2.0 * self.x[i][u][v] - p).max(0.0);
            }
        }
        total
    }

    /// LP objective `sum w_{uv} x_i^{(u,v)}`.
    pub fn objective(&self, graph: &TypeGraph) -> f64 {
        let mut total = 0.0;
        for per_u in &self.x {
            for (u, per_v) in per_u.iter().enumerate() {
                for (v, &val) in per_v.iter().enumerate() {
                    total += graph.weight(u, v) * val;
                }
            }
        }
        total
    }
}

/// A type graph together with an LP solution table; the on-disk instance.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchingInstance {
    pub graph: TypeGraph,
    pub x: LpSolution,
}

#[derive(Serialize, Deserialize)]
struct MatchingTypeFile {
    v: usize,
    p: f64,
}

#[derive(Serialize, Deserialize)]
struct MatchingOnlineFile {
    types: Vec<MatchingTypeFile>,
}

#[derive(Serialize, Deserialize)]
struct MatchingXFile {
    i: usize,
    u: usize,
    v: usize,
    val: f64,
}

#[derive(Serialize, Deserialize)]
struct MatchingFile {
    offline: usize,
    online: Vec<MatchingOnlineFile>,
    weights: BTreeMap<String, f64>,
    x: Vec<MatchingXFile>,
}

impl MatchingInstance {
    /// Parses the UTF-8 JSON matching format:
    /// `{"offline":K,"online":[{"types":[{"v":id,"p":..}]}],"weights":{"u,v":w},"x":[{"i":..,"u":..,"v":..,"val":..}]}`.
    pub fn parse(text: &str) -> Result<Self, MatchingError> {
        let file: MatchingFile =
            serde_json::from_str(text).map_err(|e| MatchingError::Schema(e.to_string()))?;
        let mut types = file
            .online
            .iter()
            .flat_map(|o| o.types.iter().map(|t| t.v + 1))
            .max()
            .unwrap_or(0);
        for key in file.weights.keys() {
            let (_, v) = parse_uv_key(key)?;
            types = types.max(v + 1);
        }
        let types = types.max(1);
        let mut weights = vec![vec![0.0; types]; file.offline];
        for (key, &w) in &file.weights {
            let (u, v) = parse_uv_key(key)?;
            if u >= file.offline {
                return Err(MatchingError::Invalid(format!("weight key {key} out of range")));
            }
            weights[u][v] = w;
        }
        let online: Vec<Vec<(usize, f64)>> = file
            .online
            .iter()
            .map(|o| o.types.iter().map(|t| (t.v, t.p)).collect())
            .collect();
        let graph = TypeGraph::new(file.offline, types, online, weights)?;
        let mut x = LpSolution::zero(&graph);
        for entry in &file.x {
            if entry.i >= graph.online_len()
                || entry.u >= graph.offline_len()
                || entry.v >= graph.types_len()
            {
                return Err(MatchingError::Invalid(format!(
                    "x entry (i={}, u={}, v={}) out of range",
                    entry.i, entry.u, entry.v
                )));
            }
            x.set(entry.i, entry.u, entry.v, entry.val);
        }
        let x = LpSolution::new(&graph, x.x)?;
        Ok(MatchingInstance { graph, x })
    }

    /// Serializes back to the JSON file format.
    pub fn to_json(&self) -> String {
        let mut weights = BTreeMap::new();
        for u in 0..self.graph.offline_len() {
            for v in 0..self.graph.types_len() {
                let w = self.graph.weight(u, v);
                if w != 0.0 {
                    weights.insert(format!("{u},{v}"), w);
                }
            }
        }
        let mut xs = Vec::new();
        for i in 0..self.graph.online_len() {
            for u in 0..self.graph.offline_len() {
                for v in 0..self.graph.types_len() {
                    let val = self.x.get(i, u, v);
                    if val != 0.0 {
                        xs.push(MatchingXFile { i, u, v, val });
                    }
                }
            }
        }
        let file = MatchingFile {
            offline: self.graph.offline_len(),
            online: (0..self.graph.online_len())
                .map(|i| MatchingOnlineFile {
                    types: self
                        .graph
                        .dist(i)
                        .iter()
                        .map(|&(v, p)| MatchingTypeFile { v, p })
                        .collect(),
                })
                .collect(),
            weights,
            x: xs,
        };
        serde_json::to_string(&file).expect("matching serialization cannot fail")
    }
}

fn parse_uv_key(key: &str) -> Result<(usize, usize), MatchingError> {
    let mut parts = key.splitn(2, ',');
    let u = parts
        .next()
        .and_then(|s| s.trim().parse().ok())
        .ok_or_else(|| MatchingError::Schema(format!("bad weight key {key:?}")))?;
    let v = parts
        .next()
        .and_then(|s| s.trim().parse().ok())
        .ok_or_else(|| MatchingError::Schema(format!("bad weight key {key:?}")))?;
    Ok((u, v))
}

// ---------------------------------------------------------------------------
// LP feasibility
// ---------------------------------------------------------------------------

const LP_TOL: f64 = 1e-9;
/// Subset constraints are enumerated, so the type count is capped.
pub const LP_SUBSET_TYPE_CAP: usize = 16;

/// Validates every LP constraint: the per-pair caps and, for each offline
/// vertex, all `2^|V|` subset constraints
/// `sum_i sum_{v in S} x <= 1 - prod_i (1 - sum_{v in S} p_i^v)`.
pub fn check_lp(
    graph: &TypeGraph,
    x: &LpSolution,
) -> Result<Result<(), LpViolation>, MatchingError> {
    let nv = graph.types_len();
    if nv > LP_SUBSET_TYPE_CAP {
        return Err(MatchingError::SizeCap {
            detail: format!("{nv} types exceeds subset-enumeration cap {LP_SUBSET_TYPE_CAP}"),
        });
    }
    let n = graph.online_len();
    for i in 0..n {
        for &(v, p) in graph.dist(i) {
            let lhs: f64 = (0..graph.offline_len()).map(|u| x.get(i, u, v)).sum();
            if lhs > p + LP_TOL {
                return Ok(Err(LpViolation::PairCap { i, v, lhs, rhs: p }));
            }
        }
    }
    // Subset sums by lowest-bit recursion, per online vertex.
    let masks = 1usize << nv;
    let mut p_sub = vec![vec![0.0f64; masks]; n];
    for i in 0..n {
        for mask in 1..masks {
            let low = mask.trailing_zeros() as usize;
            p_sub[i][mask] = p_sub[i][mask & (mask - 1)] + graph.prob(i, low);
        }
    }
    for u in 0..graph.offline_len() {
        let mut x_sub = vec![0.0f64; masks];
        for mask in 1..masks {
            let low = mask.trailing_zeros() as usize;
            let rest = mask & (mask - 1);
            let added: f64 = (0..n).map(|i| x.get(i, u, low)).sum();
            x_sub[mask] = x_sub[rest] + added;
        }
        for (mask, &lhs) in x_sub.iter().enumerate().skip(1) {
            let mut prod = 1.0;
            for row in p_sub.iter() {
                prod *= 1.0 - row[mask];
            }
            let rhs = 1.0 - prod;
            if lhs > rhs + LP_TOL {
                return Ok(Err(LpViolation::SubsetCap { u, mask: mask as u32, lhs, rhs }));
            }
        }
    }
    Ok(Ok(()))
}

/// Membership check for the query-commit proposal polytope of a single online
/// vertex: `sum_{u in S} x_u <= 1 - prod_{u in S} (1 - p_u)` for every subset
/// of offline vertices, plus non-negativity.
pub fn check_qc_polytope(edge_probs: &[f64], x: &[f64]) -> Result<bool, MatchingError> {
    if edge_probs.len() != x.len() {
        return Err(MatchingError::Invalid("probability/mass length mismatch".into()));
    }
    if edge_probs.len() > LP_SUBSET_TYPE_CAP {
        return Err(MatchingError::SizeCap {
            detail: format!("{} vertices exceeds cap {LP_SUBSET_TYPE_CAP}", x.len()),
        });
    }
    if x.iter().any(|&v| v < -LP_TOL) {
        return Ok(false);
    }
    let m = edge_probs.len();
    for mask in 1usize..(1 << m) {
        let mut lhs = 0.0;
        let mut prod = 1.0;
        for u in 0..m {
            if mask & (1 << u) != 0 {
                lhs += x[u];
                prod *= 1.0 - edge_probs[u];
            }
        }
        if lhs > 1.0 - prod + LP_TOL {
            return Ok(false);
        }
    }
    Ok(true)
}

// ---------------------------------------------------------------------------
// 1-regular normalization
// ---------------------------------------------------------------------------

/// Pads the instance with zero-weight dummies until every offline row and
/// every online column of `x` sums to one, leaving original cells unchanged.
///
/// Per deficient online vertex the per-(i,v) slack `p_i^v - sum_u x` is routed
/// to a dedicated dummy offline vertex (keeping the padded solution
/// LP-feasible: that vertex receives mass from a single online vertex).
/// Remaining offline deficits are then covered by dummy online vertices, one
/// fresh sure type each, spread greedily in vertex order.
pub fn normalize_regular(graph: &TypeGraph, x: &LpSolution) -> (TypeGraph, LpSolution) {
    let n = graph.online_len();
    let u0 = graph.offline_len();
    let v0 = graph.types_len();

    // Slack per online vertex, routed to one dummy offline vertex each.
    let mut extra_offline = 0usize;
    let mut slack_bin: Vec<Option<usize>> = vec![None; n];
    for i in 0..n {
        let total: f64 = (0..u0).map(|u| x.mass(i, u)).sum();
        if 1.0 - total > 1e-12 {
            slack_bin[i] = Some(u0 + extra_offline);
            extra_offline += 1;
        }
    }
    let u1 = u0 + extra_offline;

    // Row sums after slack filling determine the offline deficits; those are
    // covered by unit-mass dummy online vertices, an integral count.
    let mut rows = vec![0.0f64; u1];
    for i in 0..n {
        for u in 0..u0 {
            rows[u] += x.mass(i, u);
        }
        if let Some(bin) = slack_bin[i] {
            for &(v, p) in graph.dist(i) {
                let assigned: f64 = (0..u0).map(|u| x.get(i, u, v)).sum();
                rows[bin] += p - assigned;
            }
        }
    }
    let deficit_total: f64 = rows.iter().map(|r| (1.0 - r).max(0.0)).sum();
    let extra_online = deficit_total.round() as usize;
    debug_assert!(
        (deficit_total - extra_online as f64).abs() < 1e-6,
        "offline deficits must total an integer, got {deficit_total}"
    );

    let n1 = n + extra_online;
    let v1 = v0 + extra_online;
    let weights: Vec<Vec<f64>> = (0..u1)
        .map(|u| {
            let mut row = vec![0.0; v1];
            if u < u0 {
                row[..v0].copy_from_slice(&graph.weights[u]);
            }
            row
        })
        .collect();

    let mut online: Vec<Vec<(usize, f64)>> = graph.online.clone();
    for j in 0..extra_online {
        online.push(vec![(v0 + j, 1.0)]);
    }

    let mut padded = vec![vec![vec![0.0; v1]; u1]; n1];
    for i in 0..n {
        for u in 0..u0 {
            for v in 0..v0 {
                padded[i][u][v] = x.get(i, u, v);
            }
        }
        if let Some(bin) = slack_bin[i] {
            for &(v, p) in graph.dist(i) {
                let assigned: f64 = (0..u0).map(|u| x.get(i, u, v)).sum();
                padded[i][bin][v] = p - assigned;
            }
        }
    }
    let mut deficits: Vec<f64> = rows.iter().map(|r| (1.0 - r).max(0.0)).collect();
    let mut cursor = 0usize;
    for j in 0..extra_online {
        let mut budget = 1.0f64;
        while budget > 1e-12 && cursor < u1 {
            let take = budget.min(deficits[cursor]);
            if take > 0.0 {
                padded[n + j][cursor][v0 + j] += take;
                deficits[cursor] -= take;
                budget -= take;
            }
            if deficits[cursor] <= 1e-12 {
                cursor += 1;
            }
        }
        debug_assert!(budget < 1e-6, "dummy online vertex {j} left unfilled");
    }

    let graph1 = TypeGraph::new(u1, v1, online, weights).expect("padded graph is valid");
    let x1 = LpSolution::new(&graph1, padded).expect("padded solution is valid");
    (graph1, x1)
}

/// Asserts that `x` is 1-regular on `graph` within `tol`.
pub fn assert_regular(graph: &TypeGraph, x: &LpSolution, tol: f64) {
    for u in 0..graph.offline_len() {
        let row: f64 = (0..graph.online_len()).map(|i| x.mass(i, u)).sum();
        assert!((row - 1.0).abs() <= tol, "offline row {u} sums to {row}");
    }
    for i in 0..graph.online_len() {
        let col: f64 = (0..graph.offline_len()).map(|u| x.mass(i, u)).sum();
        assert!((col - 1.0).abs() <= tol, "online column {i} sums to {col}");
    }
}

// ---------------------------------------------------------------------------
// Correlated interval sampling
// ---------------------------------------------------------------------------

/// Lays intervals of the given lengths left to right on `[0, 1]` and returns
/// the overlap measures under the half-shift `eta -> eta +/- 1/2`:
/// `mu[u][u'] = Pr[eta in I_u and eta' in I_{u'}]`.
pub fn jl_mu(rho_row: &[f64]) -> Vec<Vec<f64>> {
    let total: f64 = rho_row.iter().sum();
    assert!(rho_row.iter().all(|&r| r >= 0.0), "interval lengths must be non-negative");
    assert!(total <= 1.0 + 1e-12, "interval lengths must total at most 1");
    let m = rho_row.len();
    let mut starts = Vec::with_capacity(m + 1);
    let mut acc = 0.0;
    for &r in rho_row {
        starts.push(acc);
        acc += r;
    }
    starts.push(acc);

    let overlap = |a0: f64, a1: f64, b0: f64, b1: f64| (a1.min(b1) - a0.max(b0)).max(0.0);
    let mut mu = vec![vec![0.0; m]; m];
    for u in 0..m {
        let (a0, a1) = (starts[u], starts[u + 1]);
        for v in 0..m {
            let (b0, b1) = (starts[v], starts[v + 1]);
            // eta < 1/2 shifts up; eta >= 1/2 shifts down.
            let up = overlap(a0, a1.min(0.5), b0 - 0.5, b1 - 0.5);
            let down = overlap(a0.max(0.5), a1, b0 + 0.5, b1 + 0.5);
            mu[u][v] = up + down;
        }
    }
    mu
}

/// Correlated-sampling tables for every (online vertex, type) pair.
#[derive(Debug, Clone)]
pub struct MuTable {
    /// `mu[i][v]` is the symmetric offline-by-offline overlap matrix; empty
    /// for types the vertex never draws.
    mu: Vec<Vec<Vec<Vec<f64>>>>,
}

impl MuTable {
    /// Builds the tables from a 1-regular solution (every per-(i,v) row of
    /// `rho` sums to one).
    pub fn build(graph: &TypeGraph, x: &LpSolution) -> Self {
        let mut mu = Vec::with_capacity(graph.online_len());
        for i in 0..graph.online_len() {
            let mut per_type = vec![Vec::new(); graph.types_len()];
            for &(v, _) in graph.dist(i) {
                let rho_row: Vec<f64> =
                    (0..graph.offline_len()).map(|u| x.rho(graph, i, u, v)).collect();
                per_type[v] = jl_mu(&rho_row);
            }
            mu.push(per_type);
        }
        MuTable { mu }
    }

    /// `mu_i^v(u, u')`.
    pub fn get(&self, i: usize, v: usize, u: usize, u2: usize) -> f64 {
        self.mu[i][v][u][u2]
    }

    pub fn matrix(&self, i: usize, v: usize) -> &[Vec<f64>] {
        &self.mu[i][v]
    }
}

// ---------------------------------------------------------------------------
// Matching outcome
// ---------------------------------------------------------------------------

/// Result of one online matching run.
#[derive(Debug, Clone, Default)]
pub struct Matching {
    /// `(offline u, online i, type v)` triples.
    pub edges: Vec<(usize, usize, usize)>,
    /// Total matched weight.
    pub weight: f64,
}

// ---------------------------------------------------------------------------
// MAM
// ---------------------------------------------------------------------------

/// Multistage Activation-based Matching, precomputed for repeated runs over a
/// 1-regular instance.
#[derive(Debug, Clone)]
pub struct MamAlgorithm {
    graph: TypeGraph,
    x: LpSolution,
    mu: MuTable,
    beta0: f64,
    beta1: f64,
    /// Stage means per (i, u): `E_v[(2 rho - 1)^+]`, `E_v[rho]`, and the
    /// prefixed third-stage constant `E_v[2 rho - (2 rho - 1)^+]`.
    a1: Vec<Vec<f64>>,
    a2: Vec<Vec<f64>>,
    a3: Vec<Vec<f64>>,
    /// `exp(-int_0^{beta1} A_i^u)`.
    decay_at_beta1: Vec<Vec<f64>>,
}

impl MamAlgorithm {
    pub fn new(graph: &TypeGraph, x: &LpSolution, beta0: f64, beta1: f64) -> Self {
        assert!(0.0 <= beta0 && beta0 <= beta1 && beta1 <= 1.0);
        assert_regular(graph, x, 1e-6);
        let n = graph.online_len();
        let m = graph.offline_len();
        let mu = MuTable::build(graph, x);
        let mut a1 = vec![vec![0.0; m]; n];
        let mut a2 = vec![vec![0.0; m]; n];
        let mut a3 = vec![vec![0.0; m]; n];
        for i in 0..n {
            for u in 0..m {
                for &(v, p) in graph.dist(i) {
                    let rho = x.rho(graph, i, u, v);
                    let first = (2.0 * rho - 1.0).max(0.0);
                    a1[i][u] += p * first;
                    a2[i][u] += p * rho;
                    a3[i][u] += p * (2.0 * rho - first);
                }
            }
        }
        let decay_at_beta1 = (0..n)
            .map(|i| {
                (0..m)
                    .map(|u| (-(a1[i][u] * beta0 + a2[i][u] * (beta1 - beta0))).exp())
                    .collect()
            })
            .collect();
        MamAlgorithm {
            graph: graph.clone(),
            x: x.clone(),
            mu,
            beta0,
            beta1,
            a1,
            a2,
            a3,
            decay_at_beta1,
        }
    }

    /// `exp(-int_0^t A_i^u)` with the prefixed stage rates.
    fn decay(&self, i: usize, u: usize, t: f64) -> f64 {
        let cum = self.a1[i][u] * t.min(self.beta0)
            + self.a2[i][u] * (t.min(self.beta1) - self.beta0).max(0.0)
            + self.a3[i][u] * (t - self.beta1).max(0.0);
        (-cum).exp()
    }

    /// Runs one trial. Proposals draw by inverse CDF over the offline order;
    /// an offline vertex accepts the first proposal it receives while
    /// unmatched.
    pub fn run<R: Rng>(&self, rng: &mut R) -> Matching {
        let n = self.graph.online_len();
        let m = self.graph.offline_len();
        let mut arrivals: Vec<(f64, usize, usize)> = (0..n)
            .map(|i| {
                let t: f64 = rng.gen();
                (t, i, draw_type(&self.graph, i, rng))
            })
            .collect();
        arrivals.sort_by(|a, b| a.0.total_cmp(&b.0));

        let mut matched_to: Vec<Option<(usize, usize)>> = vec![None; m];
        let mut matched_at_beta1: Option<Vec<bool>> = None;
        let mut result = Matching::default();

        for &(t, i, v) in &arrivals {
            if t >= self.beta1 && matched_at_beta1.is_none() {
                matched_at_beta1 = Some(matched_to.iter().map(Option::is_some).collect());
            }
            let mut g = vec![0.0; m];
            if t < self.beta1 {
                for (u, slot) in g.iter_mut().enumerate() {
                    let rho = self.x.rho(&self.graph, i, u, v);
                    let rate = if t < self.beta0 { (2.0 * rho - 1.0).max(0.0) } else { rho };
                    *slot = rate * self.decay(i, u, t);
                }
            } else {
                let snapshot = matched_at_beta1.as_ref().expect("snapshot exists after beta1");
                for (u, slot) in g.iter_mut().enumerate() {
                    if snapshot[u] {
                        continue;
                    }
                    let mut rate = self.x.rho(&self.graph, i, u, v);
                    for u2 in 0..m {
                        if u2 == u {
                            continue;
                        }
                        let mu = self.mu.get(i, v, u2, u);
                        if mu == 0.0 {
                            continue;
                        }
                        let survive = self.decay_at_beta1[i][u2];
                        rate += mu * (1.0 - survive);
                        if snapshot[u2] {
                            rate += mu * survive;
                        }
                    }
                    *slot = rate * self.decay(i, u, t);
                }
            }
            let total: f64 = g.iter().sum();
            assert!(total <= 1.0 + 1e-12, "proposal mass {total} exceeds 1");
            let mut draw: f64 = rng.gen();
            let mut proposal = None;
            for (u, &gu) in g.iter().enumerate() {
                if draw < gu {
                    proposal = Some(u);
                    break;
                }
                draw -= gu;
            }
            if let Some(u) = proposal {
                if matched_to[u].is_none() {
                    matched_to[u] = Some((i, v));
                    result.edges.push((u, i, v));
                    result.weight += self.graph.weight(u, v);
                }
            }
        }
        result
    }

    #[cfg(test)]
    fn stage_mean(&self, stage: u8, i: usize, u: usize) -> f64 {
        match stage {
            1 => self.a1[i][u],
            2 => self.a2[i][u],
            _ => self.a3[i][u],
        }
    }
}

/// One MAM trial with the standard thresholds.
pub fn mam_run<R: Rng>(graph: &TypeGraph, x: &LpSolution, rng: &mut R) -> Matching {
    MamAlgorithm::new(graph, x, MAM_BETA0, MAM_BETA1).run(rng)
}

/// `Gamma_MAM(x)`: the per-edge ratio of MAM, evaluated at `h = h_2(x)`.
pub fn gamma_mam(xval: f64) -> f64 {
    assert!((0.0..=1.0).contains(&xval));
    let h = h_eval(&HQuery::new(2.0, xval));
    let (c1, c2, c3) = mam_c(h);
    (c1 + c2 + c3).min(c2 + (2.0 - (-(MAM_BETA1 - MAM_BETA0)).exp()) * c3)
}

/// The two candidate per-edge expressions of the MAM bound as functions of
/// `h`: `F1 = c1 + c2 + c3` and `F2 = c2 + (2 - e^{-(b1-b0)}) c3`. Both are
/// non-increasing on `[0, 1]`.
pub fn mam_bound_components(h: f64) -> (f64, f64) {
    let (c1, c2, c3) = mam_c(h);
    (c1 + c2 + c3, c2 + (2.0 - (-(MAM_BETA1 - MAM_BETA0)).exp()) * c3)
}

/// The three stage integrals `int exp(-int_0^t A^u)` for `A^u = h / 1 / 2-h`.
fn mam_c(h: f64) -> (f64, f64, f64) {
    let span = MAM_BETA1 - MAM_BETA0;
    let c1 = stable_exp_integral(h, MAM_BETA0);
    let c2 = (-h * MAM_BETA0).exp() * (1.0 - (-span).exp());
    let c3 = (-h * MAM_BETA0 - span).exp() * stable_exp_integral(2.0 - h, 1.0 - MAM_BETA1);
    (c1, c2, c3)
}

/// `int_0^d e^{-m t} dt`, stable as `m -> 0` (the `c_1` limit is `beta_0`).
fn stable_exp_integral(m: f64, d: f64) -> f64 {
    if m == 0.0 {
        d
    } else {
        -(-m * d).exp_m1() / m
    }
}

/// `int_0^d t e^{-m t} dt`, stable for small `m * d`.
fn stable_exp_t_integral(m: f64, d: f64) -> f64 {
    let y = m * d;
    if y.abs() < 1e-3 {
        d * d * (0.5 + y * (-1.0 / 3.0 + y * (0.125 + y * (-1.0 / 30.0 + y / 144.0))))
    } else {
        (1.0 - (1.0 + y) * (-y).exp()) / (m * m)
    }
}

// ---------------------------------------------------------------------------
// CAR
// ---------------------------------------------------------------------------

/// The unique solution of
/// `int_alpha^1 e^{-t(1-x)} dt = int_0^1 e^{-t(1-x)} (1 - (t-alpha)^+ x) dt`,
/// by bisection; the left side strictly decreases in `alpha` and the right
/// side does not decrease.
pub fn car_alpha(xval: f64) -> f64 {
    assert!((0.0..=1.0).contains(&xval));
    let m = 1.0 - xval;
    let residual = |alpha: f64| {
        let lhs = (-m * alpha).exp() * stable_exp_integral(m, 1.0 - alpha);
        let rhs = stable_exp_integral(m, 1.0)
            - xval * (-m * alpha).exp() * stable_exp_t_integral(m, 1.0 - alpha);
        lhs - rhs
    };
    if residual(0.0) <= 0.0 {
        return 0.0;
    }
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if residual(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// `Gamma_CAR(x) = int_{alpha(x)}^1 e^{-t(1-x)} dt`.
pub fn gamma_car(xval: f64) -> f64 {
    let alpha = car_alpha(xval);
    let m = 1.0 - xval;
    (-m * alpha).exp() * stable_exp_integral(m, 1.0 - alpha)
}

/// Constant Activation Rate except One Large Vertex, precomputed for repeated
/// runs over a 1-regular instance.
#[derive(Debug, Clone)]
pub struct CarAlgorithm {
    graph: TypeGraph,
    x: LpSolution,
    /// Per offline vertex: its most important online neighbor and `alpha(x^u)`.
    important: Vec<usize>,
    alpha: Vec<f64>,
    mass: Vec<Vec<f64>>,
}

impl CarAlgorithm {
    pub fn new(graph: &TypeGraph, x: &LpSolution) -> Self {
        assert_regular(graph, x, 1e-6);
        let m = graph.offline_len();
        let important = (0..m).map(|u| x.i_u(u)).collect();
        let alpha = (0..m).map(|u| car_alpha(x.x_u(u))).collect();
        let mass = (0..graph.online_len())
            .map(|i| (0..m).map(|u| x.mass(i, u)).collect())
            .collect();
        CarAlgorithm { graph: graph.clone(), x: x.clone(), important, alpha, mass }
    }

    pub fn run<R: Rng>(&self, rng: &mut R) -> Matching {
        let n = self.graph.online_len();
        let m = self.graph.offline_len();
        let mut arrivals: Vec<(f64, usize, usize)> = (0..n)
            .map(|i| {
                let t: f64 = rng.gen();
                (t, i, draw_type(&self.graph, i, rng))
            })
            .collect();
        arrivals.sort_by(|a, b| a.0.total_cmp(&b.0));

        let mut matched: Vec<bool> = vec![false; m];
        let mut result = Matching::default();
        for &(t, i, v) in &arrivals {
            // Propose with probability rho_i^{(u,v)}; leftover mass proposes
            // nowhere.
            let mut draw: f64 = rng.gen();
            let mut proposal = None;
            for u in 0..m {
                let rho = self.x.rho(&self.graph, i, u, v);
                if draw < rho {
                    proposal = Some(u);
                    break;
                }
                draw -= rho;
            }
            let Some(u) = proposal else { continue };
            let active = if i == self.important[u] {
                t >= self.alpha[u]
            } else {
                rng.gen::<f64>() < (-t * self.mass[i][u]).exp()
            };
            if active && !matched[u] {
                matched[u] = true;
                result.edges.push((u, i, v));
                result.weight += self.graph.weight(u, v);
            }
        }
        result
    }
}

/// One CAR trial.
pub fn car_run<R: Rng>(graph: &TypeGraph, x: &LpSolution, rng: &mut R) -> Matching {
    CarAlgorithm::new(graph, x).run(rng)
}

/// Hybrid: one coin per run, MAM with probability 0.8, CAR otherwise.
#[derive(Debug, Clone)]
pub struct HybridAlgorithm {
    mam: MamAlgorithm,
    car: CarAlgorithm,
}

impl HybridAlgorithm {
    pub fn new(graph: &TypeGraph, x: &LpSolution) -> Self {
        HybridAlgorithm {
            mam: MamAlgorithm::new(graph, x, MAM_BETA0, MAM_BETA1),
            car: CarAlgorithm::new(graph, x),
        }
    }

    pub fn run<R: Rng>(&self, rng: &mut R) -> Matching {
        if rng.gen::<f64>() < HYBRID_MAM_PROB {
            self.mam.run(rng)
        } else {
            self.car.run(rng)
        }
    }
}

/// One hybrid trial.
pub fn hybrid_run<R: Rng>(graph: &TypeGraph, x: &LpSolution, rng: &mut R) -> Matching {
    HybridAlgorithm::new(graph, x).run(rng)
}

/// Scans `0.8 * Gamma_MAM + 0.2 * Gamma_CAR` over an `x` grid and reports
/// whether the minimum clears the 0.641 bound, with the minimizing `x` and
/// the minimum itself.
pub fn hybrid_bound_check(step: f64) -> (bool, f64, f64) {
    assert!(step > 0.0 && step <= 1e-3, "grid step must be at most 1e-3");
    let n = (1.0 / step).round() as usize;
    let mut worst_x = 0.0;
    let mut worst = f64::INFINITY;
    for k in 0..=n {
        let x = k as f64 / n as f64;
        let val = HYBRID_MAM_PROB * gamma_mam(x) + (1.0 - HYBRID_MAM_PROB) * gamma_car(x);
        if val < worst {
            worst = val;
            worst_x = x;
        }
    }
    (worst >= HYBRID_TARGET, worst_x, worst)
}

fn draw_type<R: Rng>(graph: &TypeGraph, i: usize, rng: &mut R) -> usize {
    let mut u: f64 = rng.gen();
    let dist = graph.dist(i);
    for &(v, p) in dist {
        if u < p {
            return v;
        }
        u -= p;
    }
    dist.last().expect("non-empty distribution").0
}

// ---------------------------------------------------------------------------
// Brute-force offline benchmark
// ---------------------------------------------------------------------------

/// Cap on the number of enumerated type profiles.
pub const BRUTE_FORCE_PROFILE_CAP: u64 = 1_000_000;

/// Expected weight of the offline maximum matching, by enumerating all type
/// profiles and solving each with augmenting paths.
pub fn brute_force_offline(graph: &TypeGraph) -> Result<f64, MatchingError> {
    let mut total = 0.0;
    for_each_profile(graph, |prob, profile| {
        let (value, _) = max_weight_matching(graph, profile);
        total += prob * value;
    })?;
    Ok(total)
}

/// Per-edge indicator marginals of the offline maximum matching, as an LP
/// solution table (feasible by construction), together with its value.
pub fn brute_force_marginals(graph: &TypeGraph) -> Result<(f64, LpSolution), MatchingError> {
    let mut x = LpSolution::zero(graph);
    let mut total = 0.0;
    for_each_profile(graph, |prob, profile| {
        let (value, pairs) = max_weight_matching(graph, profile);
        total += prob * value;
        for (i, u) in pairs {
            let v = profile[i];
            x.x[i][u][v] += prob;
        }
    })?;
    Ok((total, x))
}

fn for_each_profile<F: FnMut(f64, &[usize])>(
    graph: &TypeGraph,
    mut visit: F,
) -> Result<(), MatchingError> {
    let n = graph.online_len();
    let mut count: u64 = 1;
    for i in 0..n {
        count = count.saturating_mul(graph.dist(i).len() as u64);
        if count > BRUTE_FORCE_PROFILE_CAP {
            return Err(MatchingError::SizeCap {
                detail: format!("profile count exceeds {BRUTE_FORCE_PROFILE_CAP}"),
            });
        }
    }
    let mut idx = vec![0usize; n];
    let mut profile = vec![0usize; n];
    let mut prob_stack = vec![1.0f64; n + 1];
    loop {
        for i in 0..n {
            let (v, p) = graph.dist(i)[idx[i]];
            profile[i] = v;
            prob_stack[i + 1] = prob_stack[i] * p;
        }
        visit(prob_stack[n], &profile);
        let mut carry = 0;
        loop {
            idx[carry] += 1;
            if idx[carry] < graph.dist(carry).len() {
                break;
            }
            idx[carry] = 0;
            carry += 1;
            if carry == n {
                return Ok(());
            }
        }
    }
}

/// Maximum-weight bipartite matching between online vertices (with realized
/// types) and offline vertices: the Hungarian algorithm with potentials and
/// shortest augmenting paths, on a square matrix padded with zero-weight skip
/// slots. Returns the value and the matched `(online, offline)` pairs.
fn max_weight_matching(graph: &TypeGraph, profile: &[usize]) -> (f64, Vec<(usize, usize)>) {
    let n = profile.len();
    let m = graph.offline_len();
    let dim = n.max(m);
    // Costs are negated weights; padding keeps skipping free.
    let cost = |row: usize, col: usize| -> f64 {
        if row < n && col < m {
            -graph.weight(col, profile[row])
        } else {
            0.0
        }
    };
    let mut u_pot = vec![0.0f64; dim + 1];
    let mut v_pot = vec![0.0f64; dim + 1];
    let mut col_match = vec![dim; dim + 1]; // col -> row, dim = free slot
    for row in 0..dim {
        // Shortest augmenting path from this row in the reduced-cost graph;
        // column `dim` acts as the virtual source.
        let mut min_to = vec![f64::INFINITY; dim + 1];
        let mut prev_col = vec![dim; dim + 1];
        let mut used = vec![false; dim + 1];
        let mut cur_col = dim;
        col_match[dim] = row;
        loop {
            used[cur_col] = true;
            let cur_row = col_match[cur_col];
            let mut delta = f64::INFINITY;
            let mut next_col = dim;
            for col in 0..dim {
                if used[col] {
                    continue;
                }
                let reduced = cost(cur_row, col) - u_pot[cur_row] - v_pot[col];
                if reduced < min_to[col] {
                    min_to[col] = reduced;
                    prev_col[col] = cur_col;
                }
                if min_to[col] < delta {
                    delta = min_to[col];
                    next_col = col;
                }
            }
            for col in 0..=dim {
                if used[col] {
                    u_pot[col_match[col]] += delta;
                    v_pot[col] -= delta;
                } else {
                    min_to[col] -= delta;
                }
            }
            cur_col = next_col;
            if col_match[cur_col] == dim {
                break;
            }
        }
        while cur_col != dim {
            let pc = prev_col[cur_col];
            col_match[cur_col] = col_match[pc];
            cur_col = pc;
        }
    }
    let mut value = 0.0;
    let mut pairs = Vec::new();
    for col in 0..dim {
        let row = col_match[col];
        if row < n && col < m {
            let w = graph.weight(col, profile[row]);
            if w > 0.0 {
                value += w;
                pairs.push((row, col));
            }
        }
    }
    (value, pairs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_pcg::Pcg64Mcg;

    /// Independent oracle: maximum-weight matching by dynamic programming over
    /// offline-vertex subsets.
    fn dp_max_matching(graph: &TypeGraph, profile: &[usize]) -> f64 {
        let n = profile.len();
        let m = graph.offline_len();
        let full = 1usize << m;
        let mut dp = vec![vec![f64::NEG_INFINITY; full]; n + 1];
        for mask in 0..full {
            dp[n][mask] = 0.0;
        }
        for i in (0..n).rev() {
            for mask in 0..full {
                let mut best = dp[i + 1][mask];
                for u in 0..m {
                    if mask & (1 << u) != 0 {
                        let cand = graph.weight(u, profile[i]) + dp[i + 1][mask & !(1 << u)];
                        best = best.max(cand);
                    }
                }
                dp[i][mask] = best;
            }
        }
        dp[0][full - 1]
    }

    fn uniform_graph(
        offline: usize,
        online: usize,
        types: usize,
        weights: Vec<Vec<f64>>,
    ) -> TypeGraph {
        let p = 1.0 / types as f64;
        let mut dist: Vec<(usize, f64)> = (0..types).map(|v| (v, p)).collect();
        let partial: f64 = dist[..types - 1].iter().map(|d| d.1).sum();
        dist[types - 1].1 = 1.0 - partial;
        TypeGraph::new(offline, types, vec![dist; online], weights).unwrap()
    }

    #[test]
    fn parse_round_trip_and_schema_errors() {
        let text = r#"{"offline":2,"online":[{"types":[{"v":0,"p":0.5},{"v":1,"p":0.5}]}],"weights":{"0,0":3.0,"1,1":2.0},"x":[{"i":0,"u":0,"v":0,"val":0.5}]}"#;
        let inst = MatchingInstance::parse(text).unwrap();
        assert_eq!(inst.graph.offline_len(), 2);
        assert_eq!(inst.graph.weight(0, 0), 3.0);
        assert_eq!(inst.x.get(0, 0, 0), 0.5);
        let again = MatchingInstance::parse(&inst.to_json()).unwrap();
        assert_eq!(inst, again);

        assert!(MatchingInstance::parse("{}").is_err());
        let bad = r#"{"offline":1,"online":[{"types":[{"v":0,"p":0.4}]}],"weights":{},"x":[]}"#;
        assert!(MatchingInstance::parse(bad).is_err());
    }

    #[test]
    fn check_lp_accepts_zero_and_flags_pair_violation() {
        let g = uniform_graph(2, 2, 2, vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
        let zero = LpSolution::zero(&g);
        assert!(check_lp(&g, &zero).unwrap().is_ok());

        let mut x = LpSolution::zero(&g);
        // sum_u x = 0.6 > p = 0.5 for (i=0, v=0).
        x.set(0, 0, 0, 0.35);
        x.set(0, 1, 0, 0.25);
        let r = check_lp(&g, &x).unwrap();
        assert!(matches!(r, Err(LpViolation::PairCap { i: 0, v: 0, .. })));
    }

    #[test]
    fn check_lp_flags_subset_violation() {
        // Two online vertices pushing their full per-pair caps onto one
        // offline vertex: the pair caps hold but the subset bound fails
        // (0.5 + 0.5 = 1 > 1 - (1 - 0.5)^2 = 0.75).
        let g = uniform_graph(1, 2, 2, vec![vec![1.0, 1.0]]);
        let mut x = LpSolution::zero(&g);
        x.set(0, 0, 0, 0.5);
        x.set(1, 0, 0, 0.5);
        let r = check_lp(&g, &x).unwrap();
        assert!(matches!(r, Err(LpViolation::SubsetCap { u: 0, .. })), "{r:?}");
    }

    #[test]
    fn brute_force_marginals_are_lp_feasible() {
        let mut rng = Pcg64Mcg::seed_from_u64(5);
        for trial in 0..5usize {
            let offline = 1 + (trial % 3);
            let online = 2 + (trial % 3);
            let types = 2 + (trial % 2);
            let weights: Vec<Vec<f64>> = (0..offline)
                .map(|_| (0..types).map(|_| (rng.gen::<f64>() * 4.0).round()).collect())
                .collect();
            let g = uniform_graph(offline, online, types, weights);
            let (_, marg) = brute_force_marginals(&g).unwrap();
            let r = check_lp(&g, &marg).unwrap();
            assert!(r.is_ok(), "trial {trial}: {r:?}");
        }
    }

    #[test]
    fn brute_force_known_values() {
        // Single deterministic edge of weight 3.
        let g = TypeGraph::new(1, 1, vec![vec![(0, 1.0)]], vec![vec![3.0]]).unwrap();
        assert!((brute_force_offline(&g).unwrap() - 3.0).abs() < 1e-12);

        // All-zero weights.
        let g = uniform_graph(2, 2, 2, vec![vec![0.0, 0.0], vec![0.0, 0.0]]);
        assert_eq!(brute_force_offline(&g).unwrap(), 0.0);

        // 2 offline, 2 online i.i.d. over 2 types; hand enumeration over the
        // 4 profiles with w = [[2, 0], [1, 1]]:
        //   (0,0): 2 + 1 = 3;  (0,1): 2 + 1 = 3;  (1,0): 1 + 2 = 3;
        //   (1,1): only u1 covers type 1, so 1.
        // Expectation = (3 + 3 + 3 + 1) / 4 = 2.5.
        let g = uniform_graph(2, 2, 2, vec![vec![2.0, 0.0], vec![1.0, 1.0]]);
        assert!((brute_force_offline(&g).unwrap() - 2.5).abs() < 1e-12);
    }

    #[test]
    fn hungarian_matches_subset_dp_on_random_graphs() {
        let mut rng = Pcg64Mcg::seed_from_u64(17);
        for _ in 0..200 {
            let offline = 1 + rng.gen_range(0..4);
            let online = 1 + rng.gen_range(0..5);
            let types = 1 + rng.gen_range(0..3);
            let weights: Vec<Vec<f64>> = (0..offline)
                .map(|_| {
                    (0..types).map(|_| (rng.gen::<f64>() * 10.0 * 8.0).round() / 8.0).collect()
                })
                .collect();
            let g = uniform_graph(offline, online, types, weights);
            let profile: Vec<usize> = (0..online).map(|_| rng.gen_range(0..types)).collect();
            let (value, pairs) = max_weight_matching(&g, &profile);
            let expect = dp_max_matching(&g, &profile);
            assert!((value - expect).abs() < 1e-9, "{value} vs {expect}");
            let mut seen_u = std::collections::BTreeSet::new();
            let mut seen_i = std::collections::BTreeSet::new();
            let mut total = 0.0;
            for &(i, u) in &pairs {
                assert!(seen_u.insert(u) && seen_i.insert(i));
                total += g.weight(u, profile[i]);
            }
            assert!((total - value).abs() < 1e-9);
        }
    }

    #[test]
    fn jl_mu_paper_intervals() {
        let mu = jl_mu(&[0.4, 0.24, 0.36]);
        assert!((mu[0][1] - 0.14).abs() < 1e-12);
        assert!((mu[0][2] - 0.26).abs() < 1e-12);
        assert!((mu[1][2] - 0.10).abs() < 1e-12);
    }

    #[test]
    fn jl_mu_degenerate_rows() {
        // A single full interval only overlaps itself.
        let mu = jl_mu(&[1.0]);
        assert!((mu[0][0] - 1.0).abs() < 1e-12);

        // Two half intervals always shift into each other.
        let mu = jl_mu(&[0.5, 0.5]);
        assert!((mu[0][1] - 0.5).abs() < 1e-12);
        assert!(mu[0][0].abs() < 1e-12);
    }

    #[test]
    fn jl_mu_symmetry_and_row_sums() {
        let mut rng = Pcg64Mcg::seed_from_u64(3);
        for _ in 0..10_000 {
            let m = 1 + rng.gen_range(0..5);
            let mut row: Vec<f64> = (0..m).map(|_| rng.gen::<f64>()).collect();
            let total: f64 = row.iter().sum();
            for r in &mut row {
                *r /= total; // full cover: the row-sum identity applies
            }
            let mu = jl_mu(&row);
            for u in 0..m {
                for v in 0..m {
                    assert!((mu[u][v] - mu[v][u]).abs() < 1e-12);
                }
                let off_sum: f64 = (0..m).filter(|&v| v != u).map(|v| mu[u][v]).sum();
                let expect = row[u] - (2.0 * row[u] - 1.0).max(0.0);
                assert!((off_sum - expect).abs() < 1e-12, "row {u}: {off_sum} vs {expect}");
            }
        }
    }

    #[test]
    fn normalize_identity_on_regular_input() {
        let g = TypeGraph::new(1, 1, vec![vec![(0, 1.0)]], vec![vec![1.0]]).unwrap();
        let mut x = LpSolution::zero(&g);
        x.set(0, 0, 0, 1.0);
        let (g1, x1) = normalize_regular(&g, &x);
        assert_eq!(g1.offline_len(), 1);
        assert_eq!(g1.online_len(), 1);
        assert_eq!(x1.get(0, 0, 0), 1.0);
    }

    #[test]
    fn normalize_half_mass_instance() {
        let g = TypeGraph::new(1, 1, vec![vec![(0, 1.0)]], vec![vec![1.0]]).unwrap();
        let mut x = LpSolution::zero(&g);
        x.set(0, 0, 0, 0.5);
        let (g1, x1) = normalize_regular(&g, &x);
        // One dummy offline bin for the slack, one dummy online vertex for
        // the remaining offline deficits.
        assert_eq!(g1.offline_len(), 2);
        assert_eq!(g1.online_len(), 2);
        assert_regular(&g1, &x1, 1e-9);
        assert_eq!(x1.get(0, 0, 0), 0.5);
        assert!(check_lp(&g1, &x1).unwrap().is_ok());
        // Dummy edges carry no weight.
        assert_eq!(x1.objective(&g1), x.objective(&g));
    }

    #[test]
    fn normalize_empty_solution_routes_everything_to_dummies() {
        let g = uniform_graph(2, 2, 2, vec![vec![1.0, 2.0], vec![3.0, 4.0]]);
        let x = LpSolution::zero(&g);
        let (g1, x1) = normalize_regular(&g, &x);
        assert_regular(&g1, &x1, 1e-9);
        assert!(check_lp(&g1, &x1).unwrap().is_ok());
        for i in 0..2 {
            for u in 0..2 {
                for v in 0..2 {
                    assert_eq!(x1.get(i, u, v), 0.0);
                }
            }
        }
        assert_eq!(x1.objective(&g1), 0.0);
    }

    #[test]
    fn normalize_preserves_feasibility_on_marginals() {
        let mut rng = Pcg64Mcg::seed_from_u64(9);
        for trial in 0..5usize {
            let offline = 1 + (trial % 3);
            let online = 2 + (trial % 2);
            let weights: Vec<Vec<f64>> = (0..offline)
                .map(|_| (0..2).map(|_| (rng.gen::<f64>() * 5.0).round()).collect())
                .collect();
            let g = uniform_graph(offline, online, 2, weights);
            let (_, marg) = brute_force_marginals(&g).unwrap();
            let (g1, x1) = normalize_regular(&g, &marg);
            assert_regular(&g1, &x1, 1e-9);
            assert!(check_lp(&g1, &x1).unwrap().is_ok(), "trial {trial}");
            for i in 0..online {
                for u in 0..offline {
                    for v in 0..2 {
                        assert_eq!(x1.get(i, u, v), marg.get(i, u, v));
                    }
                }
            }
        }
    }

    #[test]
    fn gamma_curves_known_endpoints() {
        assert!((gamma_mam(0.0) - 0.645).abs() <= 1e-3);
        assert!((gamma_mam(1.0) - (1.0 - (-1.0f64).exp())).abs() <= 1e-9);
        assert!((gamma_car(0.0) - (1.0 - (-1.0f64).exp())).abs() <= 1e-9);
        assert!((gamma_car(1.0) - (3.0f64.sqrt() - 1.0)).abs() <= 1e-9);
        assert!(car_alpha(0.0) == 0.0);
        assert!((car_alpha(1.0) - (2.0 - 3.0f64.sqrt())).abs() <= 1e-12);
    }

    #[test]
    fn gamma_mam_midpoint_uses_h_half() {
        // h_2(0.5) = 2 - sqrt(2); the curve value is the component minimum
        // evaluated there.
        let (f1, f2) = mam_bound_components(2.0 - 2.0f64.sqrt());
        assert!((gamma_mam(0.5) - f1.min(f2)).abs() < 1e-9);
    }

    #[test]
    fn gamma_car_midpoint_matches_quadrature() {
        let x = 0.5;
        let alpha = car_alpha(x);
        // Riemann cross-check of int_alpha^1 e^{-t(1-x)} dt.
        let steps = 200_000;
        let width = (1.0 - alpha) / steps as f64;
        let mut total = 0.0;
        for k in 0..steps {
            let t = alpha + width * (k as f64 + 0.5);
            total += width * (-t * (1.0 - x)).exp();
        }
        assert!((gamma_car(x) - total).abs() < 1e-9, "{} vs {total}", gamma_car(x));
    }

    #[test]
    fn car_alpha_residuals_vanish() {
        for k in 0..=1000 {
            let x = k as f64 / 1000.0;
            let alpha = car_alpha(x);
            let m = 1.0 - x;
            let lhs = (-m * alpha).exp() * stable_exp_integral(m, 1.0 - alpha);
            let rhs = stable_exp_integral(m, 1.0)
                - x * (-m * alpha).exp() * stable_exp_t_integral(m, 1.0 - alpha);
            assert!((lhs - rhs).abs() < 1e-10, "x={x}: residual {}", lhs - rhs);
        }
    }

    #[test]
    fn gamma_mam_component_monotonicity() {
        // F1 = c1 + c2 + c3 and F2 = c2 + (2 - e^{-(b1-b0)}) c3 are both
        // non-increasing in h on [0, 1].
        let factor = 2.0 - (-(MAM_BETA1 - MAM_BETA0)).exp();
        let mut prev = (f64::INFINITY, f64::INFINITY);
        for k in 0..=1000 {
            let h = k as f64 / 1000.0;
            let (c1, c2, c3) = mam_c(h);
            let f1 = c1 + c2 + c3;
            let f2 = c2 + factor * c3;
            assert!(f1 <= prev.0 + 1e-12, "F1 increased at h={h}");
            assert!(f2 <= prev.1 + 1e-12, "F2 increased at h={h}");
            prev = (f1, f2);
        }
    }

    #[test]
    fn hybrid_bound_endpoints_and_scan() {
        let mam0 = gamma_mam(0.0);
        let car0 = gamma_car(0.0);
        assert!(0.8 * mam0 + 0.2 * car0 >= HYBRID_TARGET);
        let mam1 = gamma_mam(1.0);
        let car1 = gamma_car(1.0);
        assert!((0.8 * mam1 + 0.2 * car1 - 0.652).abs() < 1e-3);
        let (passed, worst_x, worst) = hybrid_bound_check(1e-3);
        assert!(passed, "hybrid bound fails at x={worst_x}: {worst}");
    }

    #[test]
    fn qc_polytope_membership() {
        // Querying order u1 then u2 realizes this extreme point exactly.
        let p = [0.5, 0.5];
        let extreme = [0.5, 0.25];
        assert!(check_qc_polytope(&p, &extreme).unwrap());
        let outside = [0.5, 0.3];
        assert!(!check_qc_polytope(&p, &outside).unwrap());
        let negative = [-0.1, 0.0];
        assert!(!check_qc_polytope(&p, &negative).unwrap());
    }

    #[test]
    fn single_edge_algorithms_match_closed_forms() {
        // 1 online, 1 offline, deterministic type, x = 1. MAM matches with
        // probability 1 - 1/e; CAR with probability sqrt(3) - 1.
        let g = TypeGraph::new(1, 1, vec![vec![(0, 1.0)]], vec![vec![1.0]]).unwrap();
        let mut x = LpSolution::zero(&g);
        x.set(0, 0, 0, 1.0);

        let mam = MamAlgorithm::new(&g, &x, MAM_BETA0, MAM_BETA1);
        let car = CarAlgorithm::new(&g, &x);
        let trials = 200_000u64;
        let mut rng = Pcg64Mcg::seed_from_u64(42);
        let mut mam_hits = 0u64;
        let mut car_hits = 0u64;
        for _ in 0..trials {
            if !mam.run(&mut rng).edges.is_empty() {
                mam_hits += 1;
            }
            if !car.run(&mut rng).edges.is_empty() {
                car_hits += 1;
            }
        }
        let mam_freq = mam_hits as f64 / trials as f64;
        let car_freq = car_hits as f64 / trials as f64;
        let se = (0.25f64 / trials as f64).sqrt();
        assert!((mam_freq - (1.0 - (-1.0f64).exp())).abs() < 5.0 * se, "MAM freq {mam_freq}");
        assert!((car_freq - (3.0f64.sqrt() - 1.0)).abs() < 5.0 * se, "CAR freq {car_freq}");
    }

    #[test]
    fn mam_aiu_piecewise_rates() {
        // For 1-regular inputs the per-u total rate is h_u on [0, b0], 1 on
        // (b0, b1], and 2 - h_u on (b1, 1].
        let g = uniform_graph(2, 3, 2, vec![vec![1.0, 2.0], vec![2.0, 1.0]]);
        let (_, marg) = brute_force_marginals(&g).unwrap();
        let (g1, x1) = normalize_regular(&g, &marg);
        let alg = MamAlgorithm::new(&g1, &x1, MAM_BETA0, MAM_BETA1);
        for u in 0..g1.offline_len() {
            let h_u = x1.h_u(&g1, u);
            let total1: f64 = (0..g1.online_len()).map(|i| alg.stage_mean(1, i, u)).sum();
            let total2: f64 = (0..g1.online_len()).map(|i| alg.stage_mean(2, i, u)).sum();
            let total3: f64 = (0..g1.online_len()).map(|i| alg.stage_mean(3, i, u)).sum();
            assert!((total1 - h_u).abs() < 1e-9, "u={u}: {total1} vs h_u={h_u}");
            assert!((total2 - 1.0).abs() < 1e-9, "u={u}: {total2}");
            assert!((total3 - (2.0 - h_u)).abs() < 1e-9, "u={u}: {total3}");
        }
    }

    #[test]
    fn hybrid_runs_deterministically() {
        let g = TypeGraph::new(1, 1, vec![vec![(0, 1.0)]], vec![vec![1.0]]).unwrap();
        let mut x = LpSolution::zero(&g);
        x.set(0, 0, 0, 1.0);
        let hybrid = HybridAlgorithm::new(&g, &x);
        let runs: Vec<usize> = {
            let mut rng = Pcg64Mcg::seed_from_u64(7);
            (0..100).map(|_| hybrid.run(&mut rng).edges.len()).collect()
        };
        let again: Vec<usize> = {
            let mut rng = Pcg64Mcg::seed_from_u64(7);
            (0..100).map(|_| hybrid.run(&mut rng).edges.len()).collect()
        };
        assert_eq!(runs, again);
    }
}
