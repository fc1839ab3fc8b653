//! Prophet secretary instances: finite discrete value distributions per item,
//! the derived win-probability tables `rho`/`x`, and instance generators.
//!
//! Items have disjoint supports in spirit: ties across items are broken by a
//! deterministic total order in which equal values favor the smaller item
//! index, matching the usual infinitesimal-perturbation convention.

use std::fmt;

use serde::{Deserialize, Serialize};

/// Tolerance for "probabilities sum to one" at parse time.
pub const PROB_SUM_TOL: f64 = 1e-12;

/// One support point of an item's value distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValueAtom {
    /// Realized value, non-negative.
    #[serde(rename = "v")]
    pub value: f64,
    /// Probability of drawing this value, in (0, 1].
    #[serde(rename = "p")]
    pub prob: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct InstanceFile {
    items: Vec<Vec<ValueAtom>>,
}

/// A prophet secretary instance: one finite value distribution per item.
///
/// Atoms within an item are kept sorted by ascending value and have distinct
/// values; probabilities per item sum to one within [`PROB_SUM_TOL`].
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    items: Vec<Vec<ValueAtom>>,
}

/// Validation and parse errors for [`Instance`].
#[derive(Debug)]
pub enum InstanceError {
    /// The input was not valid JSON for the instance schema.
    Schema(String),
    /// The instance has no items.
    NoItems,
    /// Item `item` has an empty distribution.
    EmptyItem { item: usize },
    /// Item `item` has an atom with a non-positive probability.
    NonPositiveProb { item: usize, prob: f64 },
    /// Item `item` has an atom with a negative value.
    NegativeValue { item: usize, value: f64 },
    /// Item `item` repeats a value within its own support.
    DuplicateValue { item: usize, value: f64 },
    /// Item `item`'s probabilities sum to `sum` instead of one.
    ProbSum { item: usize, sum: f64 },
}

impl fmt::Display for InstanceError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InstanceError::Schema(msg) => write!(f, "instance schema violation: {msg}"),
            InstanceError::NoItems => write!(f, "instance has no items"),
            InstanceError::EmptyItem { item } => {
                write!(f, "item {item} has an empty distribution")
            }
            InstanceError::NonPositiveProb { item, prob } => {
                write!(f, "item {item} has non-positive probability {prob}")
            }
            InstanceError::NegativeValue { item, value } => {
                write!(f, "item {item} has negative value {value}")
            }
            InstanceError::DuplicateValue { item, value } => {
                write!(f, "item {item} repeats value {value}")
            }
            InstanceError::ProbSum { item, sum } => {
                write!(f, "item {item}: probabilities sum to {sum}")
            }
        }
    }
}

impl std::error::Error for InstanceError {}

impl Instance {
    /// Builds an instance from raw per-item atom lists, canonicalizing atom
    /// order to ascending value and validating all invariants.
    pub fn new(items: Vec<Vec<ValueAtom>>) -> Result<Self, InstanceError> {
        if items.is_empty() {
            return Err(InstanceError::NoItems);
        }
        let mut canonical = Vec::with_capacity(items.len());
        for (i, mut atoms) in items.into_iter().enumerate() {
            if atoms.is_empty() {
                return Err(InstanceError::EmptyItem { item: i });
            }
            for a in &atoms {
                if !(a.prob > 0.0) || a.prob > 1.0 {
                    return Err(InstanceError::NonPositiveProb { item: i, prob: a.prob });
                }
                if !(a.value >= 0.0) {
                    return Err(InstanceError::NegativeValue { item: i, value: a.value });
                }
            }
            atoms.sort_by(|a, b| a.value.total_cmp(&b.value));
            for w in atoms.windows(2) {
                if w[0].value == w[1].value {
                    return Err(InstanceError::DuplicateValue { item: i, value: w[0].value });
                }
            }
            let sum: f64 = atoms.iter().map(|a| a.prob).sum();
            if (sum - 1.0).abs() > PROB_SUM_TOL {
                return Err(InstanceError::ProbSum { item: i, sum });
            }
            canonical.push(atoms);
        }
        Ok(Instance { items: canonical })
    }

    /// Parses the UTF-8 JSON instance format `{"items":[[{"v":..,"p":..},..],..]}`.
    pub fn parse(text: &str) -> Result<Self, InstanceError> {
        let file: InstanceFile =
            serde_json::from_str(text).map_err(|e| InstanceError::Schema(e.to_string()))?;
        Instance::new(file.items)
    }

    /// Serializes back to the JSON file format. Round-trips through [`Instance::parse`].
    pub fn to_json(&self) -> String {
        serde_json::to_string(&InstanceFile { items: self.items.clone() })
            .expect("instance serialization cannot fail")
    }

    /// Number of items.
    pub fn len(&self) -> usize {
        self.items.len()
    }

    /// True when the instance has no items (never holds for a validated instance).
    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Atoms of item `i`, ascending by value.
    pub fn atoms(&self, i: usize) -> &[ValueAtom] {
        &self.items[i]
    }

    /// Iterator over all items' atom lists.
    pub fn items(&self) -> impl Iterator<Item = &[ValueAtom]> {
        self.items.iter().map(|v| v.as_slice())
    }

    /// Probability that item `j`'s draw loses to value `value` of item `i`
    /// under the tie-break order: `(v, i)` beats `(v', j)` iff `v > v'`, or
    /// `v = v'` and `i < j`.
    fn loses_to(&self, j: usize, value: f64, i: usize) -> f64 {
        self.items[j]
            .iter()
            .filter(|a| a.value < value || (a.value == value && j > i))
            .map(|a| a.prob)
            .sum()
    }
}

/// Win-probability tables and summary statistics derived from an [`Instance`].
#[derive(Debug, Clone)]
pub struct DerivedStats {
    rho: Vec<Vec<f64>>,
    x: Vec<Vec<f64>>,
    probs: Vec<Vec<f64>>,
    values: Vec<Vec<f64>>,
    prophet: f64,
    largest_item: usize,
    x0: f64,
}

impl DerivedStats {
    /// `rho[i][k]`: probability that every other item draws below item `i`'s
    /// `k`-th value (conditional win probability of the pair).
    pub fn rho(&self, i: usize, k: usize) -> f64 {
        self.rho[i][k]
    }

    /// `x[i][k] = p[i][k] * rho[i][k]`: probability that the pair is the unique maximum.
    pub fn x(&self, i: usize, k: usize) -> f64 {
        self.x[i][k]
    }

    /// Expected maximum value over the product outcome space.
    pub fn prophet(&self) -> f64 {
        self.prophet
    }

    /// Index of the item most likely to hold the maximum (smallest index on ties).
    pub fn largest_item(&self) -> usize {
        self.largest_item
    }

    /// Win probability of the largest item: `sum_v x[i0][v]`.
    pub fn x0(&self) -> f64 {
        self.x0
    }

    /// Per-item win probability `sum_v x[i][v]`.
    pub fn item_win_prob(&self, i: usize) -> f64 {
        self.x[i].iter().sum()
    }

    /// `p[i][k]`, copied from the instance for convenience.
    pub fn prob(&self, i: usize, k: usize) -> f64 {
        self.probs[i][k]
    }

    /// The `k`-th value of item `i`, ascending in `k`.
    pub fn value(&self, i: usize, k: usize) -> f64 {
        self.values[i][k]
    }

    /// Number of values in item `i`'s support.
    pub fn support_len(&self, i: usize) -> usize {
        self.probs[i].len()
    }

    /// Number of items.
    pub fn len(&self) -> usize {
        self.x.len()
    }

    /// True when there are no items (never holds; stats come from a validated instance).
    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }
}

/// Computes `rho`, `x`, the prophet value, and the largest item of `inst`.
pub fn derived_stats(inst: &Instance) -> DerivedStats {
    let n = inst.len();
    let mut rho = Vec::with_capacity(n);
    let mut x = Vec::with_capacity(n);
    let mut probs = Vec::with_capacity(n);
    let mut values = Vec::with_capacity(n);
    let mut prophet = 0.0;
    for i in 0..n {
        let mut rho_i = Vec::with_capacity(inst.atoms(i).len());
        let mut x_i = Vec::with_capacity(inst.atoms(i).len());
        for atom in inst.atoms(i) {
            let mut r = 1.0;
            for j in 0..n {
                if j != i {
                    r *= inst.loses_to(j, atom.value, i);
                }
            }
            let xv = atom.prob * r;
            prophet += atom.value * xv;
            rho_i.push(r);
            x_i.push(xv);
        }
        rho.push(rho_i);
        x.push(x_i);
        probs.push(inst.atoms(i).iter().map(|a| a.prob).collect());
        values.push(inst.atoms(i).iter().map(|a| a.value).collect());
    }
    let mut largest_item = 0;
    let mut best = f64::NEG_INFINITY;
    for (i, xi) in x.iter().enumerate() {
        let s: f64 = xi.iter().sum();
        if s > best {
            best = s;
            largest_item = i;
        }
    }
    let x0 = x[largest_item].iter().sum();
    DerivedStats { rho, x, probs, values, prophet, largest_item, x0 }
}

/// Generates the classical hard family: one large item worth `1/p` with
/// probability `p`, plus `n` i.i.d. small items worth 1 with probability `1/n`.
pub fn gen_hard_instance(n: usize, p: f64) -> Result<Instance, InstanceError> {
    if n == 0 {
        return Err(InstanceError::NoItems);
    }
    assert!(p > 0.0 && p <= 1.0, "large-item probability must lie in (0, 1]");
    let mut items = Vec::with_capacity(n + 1);
    let mut large = Vec::new();
    if p < 1.0 {
        large.push(ValueAtom { value: 0.0, prob: 1.0 - p });
    }
    large.push(ValueAtom { value: 1.0 / p, prob: p });
    items.push(large);
    let q = 1.0 / n as f64;
    for _ in 0..n {
        let mut small = Vec::new();
        if q < 1.0 {
            small.push(ValueAtom { value: 0.0, prob: 1.0 - q });
        }
        small.push(ValueAtom { value: 1.0, prob: q });
        items.push(small);
    }
    Instance::new(items)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Independent oracle: expected maximum and per-pair win probabilities by
    /// enumerating the full product outcome space under the same tie order.
    fn brute_force_max(inst: &Instance) -> (f64, Vec<Vec<f64>>) {
        let n = inst.len();
        let mut wins: Vec<Vec<f64>> = (0..n)
            .map(|i| vec![0.0; inst.atoms(i).len()])
            .collect();
        let mut emax = 0.0;
        let mut idx = vec![0usize; n];
        loop {
            let mut prob = 1.0;
            let mut win_item = 0;
            let mut win_atom = 0;
            let mut win_value = f64::NEG_INFINITY;
            for i in 0..n {
                let a = inst.atoms(i)[idx[i]];
                prob *= a.prob;
                // Later items only displace on strictly larger value.
                if a.value > win_value {
                    win_value = a.value;
                    win_item = i;
                    win_atom = idx[i];
                }
            }
            emax += prob * win_value;
            wins[win_item][win_atom] += prob;
            let mut carry = 0;
            loop {
                idx[carry] += 1;
                if idx[carry] < inst.atoms(carry).len() {
                    break;
                }
                idx[carry] = 0;
                carry += 1;
                if carry == n {
                    return (emax, wins);
                }
            }
        }
    }

    fn atom(value: f64, prob: f64) -> ValueAtom {
        ValueAtom { value, prob }
    }

    #[test]
    fn parse_single_deterministic_item() {
        let inst = Instance::parse(r#"{"items":[[{"v":5.0,"p":1.0}]]}"#).unwrap();
        assert_eq!(inst.len(), 1);
        assert_eq!(inst.atoms(0), &[atom(5.0, 1.0)]);
    }

    #[test]
    fn parse_rejects_probability_deficit() {
        let err = Instance::parse(r#"{"items":[[{"v":1.0,"p":0.6}]]}"#).unwrap_err();
        match err {
            InstanceError::ProbSum { item: 0, sum } => assert!((sum - 0.6).abs() < 1e-15),
            other => panic!("unexpected error {other}"),
        }
        assert!(err.to_string().contains("probabilities sum to 0.6"));
    }

    #[test]
    fn parse_two_item_round_trip() {
        let text = r#"{"items":[[{"v":1.0,"p":1.0}],[{"v":2.0,"p":0.5},{"v":0.0,"p":0.5}]]}"#;
        let inst = Instance::parse(text).unwrap();
        assert_eq!(inst.len(), 2);
        // Atom order canonicalized to ascending value.
        assert_eq!(inst.atoms(1)[0], atom(0.0, 0.5));
        let again = Instance::parse(&inst.to_json()).unwrap();
        assert_eq!(inst, again);
    }

    #[test]
    fn parse_rejects_bad_inputs() {
        assert!(matches!(Instance::parse(r#"{"items":[]}"#), Err(InstanceError::NoItems)));
        assert!(matches!(
            Instance::parse(r#"{"items":[[]]}"#),
            Err(InstanceError::EmptyItem { item: 0 })
        ));
        assert!(matches!(
            Instance::parse(r#"{"items":[[{"v":1.0,"p":0.0},{"v":0.0,"p":1.0}]]}"#),
            Err(InstanceError::NonPositiveProb { item: 0, .. })
        ));
        assert!(matches!(
            Instance::parse(r#"{"items":[[{"v":-1.0,"p":1.0}]]}"#),
            Err(InstanceError::NegativeValue { item: 0, .. })
        ));
        assert!(matches!(
            Instance::parse(r#"{"items":[[{"v":1.0,"p":0.5},{"v":1.0,"p":0.5}]]}"#),
            Err(InstanceError::DuplicateValue { item: 0, .. })
        ));
        assert!(Instance::parse("not json").is_err());
    }

    #[test]
    fn stats_single_deterministic_item() {
        let inst = Instance::new(vec![vec![atom(5.0, 1.0)]]).unwrap();
        let st = derived_stats(&inst);
        assert_eq!(st.rho(0, 0), 1.0);
        assert_eq!(st.x(0, 0), 1.0);
        assert_eq!(st.prophet(), 5.0);
        assert_eq!(st.largest_item(), 0);
        assert_eq!(st.x0(), 1.0);
    }

    #[test]
    fn stats_two_item_bernoulli() {
        // Enumerating the two outcomes: item 2 wins with value 2 w.p. 0.5,
        // otherwise item 1 wins with value 1.
        let inst = Instance::new(vec![
            vec![atom(1.0, 1.0)],
            vec![atom(2.0, 0.5), atom(0.0, 0.5)],
        ])
        .unwrap();
        let st = derived_stats(&inst);
        assert!((st.x(0, 0) - 0.5).abs() < 1e-15);
        assert_eq!(st.x(1, 0), 0.0); // value 0 never wins: item 1 precedes in ties
        assert!((st.x(1, 1) - 0.5).abs() < 1e-15);
        assert!((st.prophet() - 1.5).abs() < 1e-15);
    }

    #[test]
    fn stats_tie_break_prefers_smaller_index() {
        let inst = Instance::new(vec![vec![atom(1.0, 1.0)], vec![atom(1.0, 1.0)]]).unwrap();
        let st = derived_stats(&inst);
        assert_eq!(st.x(0, 0), 1.0);
        assert_eq!(st.x(1, 0), 0.0);
        assert_eq!(st.largest_item(), 0);
        assert_eq!(st.x0(), 1.0);
    }

    #[test]
    fn gen_hard_instance_shapes() {
        let inst = gen_hard_instance(1, 1.0).unwrap();
        assert_eq!(inst.len(), 2);
        assert!(gen_hard_instance(0, 0.5).is_err());

        let inst = gen_hard_instance(20, 0.5).unwrap();
        let st = derived_stats(&inst);
        assert_eq!(st.largest_item(), 0);
        // Large item wins when it realizes 2.0 (beats every small item), and
        // when everything is zero (tie-break to index 0).
        let all_small_zero = (1.0 - 1.0 / 20.0f64).powi(20);
        let expected_x0 = 0.5 + 0.5 * all_small_zero;
        assert!((st.x0() - expected_x0).abs() < 1e-12);
    }

    #[test]
    fn prophet_matches_brute_force_enumeration() {
        let inst = Instance::new(vec![
            vec![atom(3.0, 0.2), atom(1.0, 0.5), atom(0.0, 0.3)],
            vec![atom(2.5, 0.4), atom(0.5, 0.6)],
            vec![atom(4.0, 0.1), atom(0.25, 0.9)],
            vec![atom(1.5, 1.0)],
        ])
        .unwrap();
        let st = derived_stats(&inst);
        let (emax, wins) = brute_force_max(&inst);
        assert!((st.prophet() - emax).abs() <= 1e-12);
        for i in 0..inst.len() {
            for k in 0..inst.atoms(i).len() {
                assert!(
                    (st.x(i, k) - wins[i][k]).abs() <= 1e-12,
                    "x[{i}][{k}] = {} vs oracle {}",
                    st.x(i, k),
                    wins[i][k]
                );
            }
        }
    }

    #[test]
    fn brute_force_tie_break_matches_order() {
        // Equal values across items resolve toward the smaller index in both
        // the analytic tables and the enumeration oracle.
        let inst = Instance::new(vec![
            vec![atom(2.0, 0.5), atom(0.0, 0.5)],
            vec![atom(2.0, 0.7), atom(1.0, 0.3)],
        ])
        .unwrap();
        let st = derived_stats(&inst);
        let (emax, wins) = brute_force_max(&inst);
        assert!((st.prophet() - emax).abs() <= 1e-12);
        assert!((st.x(0, 1) - wins[0][1]).abs() <= 1e-12);
        assert!((st.x(1, 1) - wins[1][1]).abs() <= 1e-12);
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        fn arb_instance() -> impl Strategy<Value = Instance> {
            let atoms = prop::collection::vec((0u32..40, 1u32..100), 1..4);
            prop::collection::vec(atoms, 1..6).prop_map(|raw| {
                let items = raw
                    .into_iter()
                    .map(|item| {
                        let mut seen = std::collections::BTreeSet::new();
                        let mut atoms: Vec<(u32, u32)> = item
                            .into_iter()
                            .filter(|(v, _)| seen.insert(*v))
                            .collect();
                        atoms.sort_by_key(|(v, _)| *v);
                        let total: u32 = atoms.iter().map(|(_, w)| w).sum();
                        let mut acc = 0.0;
                        let n = atoms.len();
                        atoms
                            .iter()
                            .enumerate()
                            .map(|(k, (v, w))| {
                                // Exact unit sum: last atom takes the remainder.
                                let p = if k + 1 == n {
                                    1.0 - acc
                                } else {
                                    let p = *w as f64 / total as f64;
                                    acc += p;
                                    p
                                };
                                ValueAtom { value: *v as f64 / 4.0, prob: p }
                            })
                            .collect::<Vec<_>>()
                    })
                    .collect();
                Instance::new(items).expect("generated instance is valid")
            })
        }

        proptest! {
            #[test]
            fn win_probabilities_sum_to_one(inst in arb_instance()) {
                let st = derived_stats(&inst);
                let total: f64 = (0..inst.len())
                    .flat_map(|i| (0..inst.atoms(i).len()).map(move |k| (i, k)))
                    .map(|(i, k)| st.x(i, k))
                    .sum();
                prop_assert!((total - 1.0).abs() < 1e-9);
            }

            #[test]
            fn rho_is_monotone_and_bounded(inst in arb_instance()) {
                let st = derived_stats(&inst);
                for i in 0..inst.len() {
                    let mut prev = 0.0;
                    for k in 0..inst.atoms(i).len() {
                        let r = st.rho(i, k);
                        prop_assert!((0.0..=1.0).contains(&r));
                        prop_assert!(r >= prev - 1e-15);
                        prev = r;
                    }
                }
            }

            #[test]
            fn prophet_matches_enumeration(inst in arb_instance()) {
                let st = derived_stats(&inst);
                let (emax, _) = brute_force_max(&inst);
                prop_assert!((st.prophet() - emax).abs() <= 1e-12 * (1.0 + emax));
            }

            #[test]
            fn serialization_round_trips(inst in arb_instance()) {
                let again = Instance::parse(&inst.to_json()).unwrap();
                prop_assert_eq!(inst, again);
            }
        }
    }
}
