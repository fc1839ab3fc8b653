//! The bound function `h_s(x)`.
//!
//! For `s > 1` and `x` in `(0, 1]`,
//!
//! ```text
//! h_s(x) = max_{t in [0, x)}  t + 1/(s-1) * sum_{k >= 0} (s*x - x/(1 - t - k*x))^+
//! ```
//!
//! with the convention `h_s(0) = 1 - ln(s)/(s-1)`, the right limit. The sum
//! only collects terms with `1 - t - k*x > 1/s`; every later summand is
//! non-positive before clamping, so summation stops at the first such `k`.
//!
//! Within a stretch of `t` where the active-term count is fixed, each active
//! term has second derivative `-2x/(1 - t - k*x)^3 < 0`, so the objective is
//! concave there and ternary search per segment finds the maximum. Segment
//! boundaries sit where a summand activates, at `t_k = 1 - 1/s - k*x`.

/// Default absolute accuracy for [`h_eval`].
pub const H_TOL: f64 = 1e-9;

/// An `h_s(x)` evaluation request.
#[derive(Debug, Clone, Copy)]
pub struct HQuery {
    /// Invariant parameter, `> 1`.
    pub s: f64,
    /// Largest-item win probability, in `[0, 1]`.
    pub x: f64,
    /// Absolute accuracy of the maximization, `> 0`.
    pub tol: f64,
}

impl HQuery {
    /// Query with the default tolerance [`H_TOL`].
    pub fn new(s: f64, x: f64) -> Self {
        HQuery { s, x, tol: H_TOL }
    }
}

/// The limit of `h_s(x)` as `x -> 0+`: `1 - ln(s)/(s-1)`.
pub fn h_limit_at_zero(s: f64) -> f64 {
    assert!(s > 1.0);
    1.0 - s.ln() / (s - 1.0)
}

/// The inner objective `t + 1/(s-1) * sum_k (s*x - x/(1 - t - k*x))^+`.
///
/// Requires `s > 1` and `0 <= t < x <= 1`.
pub fn h_inner(s: f64, x: f64, t: f64) -> f64 {
    assert!(t < x, "h_inner requires t < x");
    h_inner_closure(s, x, t)
}

/// Same objective extended continuously to `t = x`; the maximization works on
/// the closure of `[0, x)`, whose supremum equals the max over the closure.
fn h_inner_closure(s: f64, x: f64, t: f64) -> f64 {
    assert!(s > 1.0, "h_inner requires s > 1");
    assert!(x > 0.0 && x <= 1.0, "h_inner requires 0 < x <= 1");
    assert!((0.0..=x).contains(&t), "h_inner requires 0 <= t <= x");
    let cutoff = 1.0 / s;
    let mut acc = 0.0;
    let mut k = 0u32;
    loop {
        let d = 1.0 - t - f64::from(k) * x;
        if d <= cutoff {
            break;
        }
        acc += s * x - x / d;
        k += 1;
    }
    t + acc / (s - 1.0)
}

/// Evaluates `h_s(x)` to absolute accuracy `q.tol`.
pub fn h_eval(q: &HQuery) -> f64 {
    let HQuery { s, x, tol } = *q;
    assert!(s > 1.0, "h_eval requires s > 1");
    assert!((0.0..=1.0).contains(&x), "h_eval requires x in [0, 1]");
    assert!(tol > 0.0, "h_eval requires tol > 0");
    if x == 0.0 {
        return h_limit_at_zero(s);
    }

    // Segment boundaries t_k = 1 - 1/s - k*x that fall inside (0, x). The
    // window has length x, so at most a couple of k values qualify.
    let mut cuts = vec![0.0, x];
    let approx = (1.0 - 1.0 / s) / x;
    let k_lo = if approx > 2.0 { approx as u64 - 2 } else { 0 };
    for k in k_lo..k_lo + 5 {
        let tk = 1.0 - 1.0 / s - k as f64 * x;
        if tk > 0.0 && tk < x {
            cuts.push(tk);
        }
    }
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();

    // Ternary search is exact up to tol once the bracket is narrower than
    // tol divided by a bound on |d/dt h_inner|.
    let slope_bound = 1.0 + s + s * s * x / (s - 1.0);
    let width_goal = (tol / slope_bound).max(f64::EPSILON);

    let mut best = f64::NEG_INFINITY;
    for w in cuts.windows(2) {
        let (mut a, mut b) = (w[0], w[1]);
        best = best.max(h_inner_closure(s, x, a));
        best = best.max(h_inner_closure(s, x, b));
        while b - a > width_goal {
            let m1 = a + (b - a) / 3.0;
            let m2 = b - (b - a) / 3.0;
            if h_inner_closure(s, x, m1) < h_inner_closure(s, x, m2) {
                a = m1;
            } else {
                b = m2;
            }
        }
        best = best.max(h_inner_closure(s, x, 0.5 * (a + b)));
    }
    best
}

/// Checks the left-Lipschitz property `h_s(x) - h_s(x') <= (s+1)/2 * (x - x')`
/// up to twice the evaluation tolerance.
pub fn h_lipschitz_check(s: f64, x_low: f64, x_high: f64) -> bool {
    assert!((0.0..=x_high).contains(&x_low) && x_high <= 1.0);
    let hi = h_eval(&HQuery::new(s, x_high));
    let lo = h_eval(&HQuery::new(s, x_low));
    hi - lo <= 0.5 * (s + 1.0) * (x_high - x_low) + 2.0 * H_TOL
}
