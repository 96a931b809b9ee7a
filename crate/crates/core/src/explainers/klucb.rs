//! KL confidence bounds for Bernoulli means.

const BISECTION_TOL: f64 = 1e-9;

/// `KL(Ber(p) || Ber(q))`, with `0 ln 0 = 0` and `+inf` where `q` is at a
/// boundary that `p` is not.
pub fn kl_bernoulli(p: f64, q: f64) -> f64 {
    let term = |a: f64, b: f64| {
        if a == 0.0 {
            0.0
        } else if b == 0.0 {
            f64::INFINITY
        } else {
            a * (a / b).ln()
        }
    };
    term(p, q) + term(1.0 - p, 1.0 - q)
}

/// Lower and upper ends of `{ q in [0,1] : trials * KL(successes/trials || q) <= beta }`.
pub fn kl_lucb_bounds(successes: u64, trials: u64, beta: f64) -> (f64, f64) {
    assert!(trials >= 1 && successes <= trials, "need 0 <= successes <= trials, trials >= 1");
    let n = trials as f64;
    let p = successes as f64 / n;
    let within = |q: f64| n * kl_bernoulli(p, q) <= beta;

    let upper = if within(1.0) {
        1.0
    } else {
        let (mut lo, mut hi) = (p, 1.0);
        while hi - lo > BISECTION_TOL {
            let mid = 0.5 * (lo + hi);
            if within(mid) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        lo
    };
    let lower = if within(0.0) {
        0.0
    } else {
        let (mut lo, mut hi) = (0.0, p);
        while hi - lo > BISECTION_TOL {
            let mid = 0.5 * (lo + hi);
            if within(mid) {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        hi
    };
    (lower, upper)
}

/// Exploration rate for round `t` of a best-arm search over `arms` arms.
pub fn anchor_beta(arms: usize, t: usize, delta: f64) -> f64 {
    const ALPHA: f64 = 1.1;
    const K: f64 = 405.5;
    let temp = (K * arms as f64 * (t as f64).powf(ALPHA) / delta).ln();
    temp + temp.ln()
}
