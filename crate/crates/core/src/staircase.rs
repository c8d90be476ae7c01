//! The instantaneous-division limit of the growth rate.
//!
//! With a square-wave time modulation (window `[0, tau)` open, `[tau, T)`
//! blocked) the growth rate converges, as the division rate scale goes to
//! infinity, to a staircase function of the majority age `a`:
//!
//! `lambda_inf(a) = N_a * log(2) / (ceil(N_a a / T) * T)`
//!
//! where `N_a` is the smallest `k >= 1` with `k*a` in the closed blocked
//! window `[tau, T] + N*T`. Window membership is decided in exact integer
//! arithmetic whenever `(a, tau, T)` are rational; step boundaries are
//! measure-zero sets that floating point misclassifies.

use crate::error::{Error, Result};
use crate::rational::{rationalize, to_f64, widen};
use num_rational::Ratio;
use num_traits::Signed;
use serde::Serialize;

type Rat = Ratio<i128>;

const FLOAT_EDGE_TOL: f64 = 1e-12;
const FLOAT_SEARCH_CAP: u64 = 1_000_000;
const RATIONAL_SEARCH_CAP: u64 = 200_000_000;
const WALK_CAP: usize = 100_000;
const PROMOTE_MAX_DEN: i64 = 1_000_000;

/// First window-hitting index: finite, or never for the half-open window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Multiplicity {
    Finite(u64),
    Infinite,
}

/// One step of the staircase, with its exact description when the inputs
/// were rational.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StaircaseResult {
    pub n_a: u64,
    /// `p_a = ceil(N_a a / T) - 1`.
    pub p_a: u64,
    /// `N_a log2 / ((p_a + 1) T)`, in the original time units.
    pub lambda_inf: f64,
    /// Left end of the step `{a' : lambda_inf(a') = lambda_inf(a)}`; always
    /// attained (the staircase is right continuous).
    pub a_l: f64,
    /// Right end of the step. Attained exactly when `right_closed`; otherwise
    /// `lambda_inf(a_r)` already belongs to the next (lower) step.
    pub a_r: f64,
    pub right_closed: bool,
    /// Convergence-rate bound `min((a_r - a)/2, tau)`.
    pub rate_bound: f64,
    pub exact: Option<ExactStep>,
}

/// Exact rational description of a step, normalized to `T = 1`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExactStep {
    pub a: (i64, i64),
    pub tau: (i64, i64),
    pub a_l: (i64, i64),
    pub a_r: (i64, i64),
}

/// Division times of the deterministic jump process started from age `x0`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct JumpTrajectory {
    pub division_times: Vec<f64>,
    pub horizon: f64,
}

impl JumpTrajectory {
    /// Number of divisions up to time `t`, inclusive.
    pub fn m_of(&self, t: f64) -> usize {
        self.division_times
            .iter()
            .take_while(|&&d| d <= t + 1e-12)
            .count()
    }
}

// ---------------------------------------------------------------------------
// Exact window combinatorics over a common denominator
// ---------------------------------------------------------------------------

/// `(a, tau)` normalized to `T = 1`, both positive, `tau < 1`.
#[derive(Debug, Clone, Copy)]
struct ExactWindow {
    /// `a = a_num / den`.
    a_num: u128,
    /// `tau = tau_num / den`.
    tau_num: u128,
    den: u128,
}

impl ExactWindow {
    fn new(a: Rat, tau: Rat) -> Result<Self> {
        if !a.is_positive() || !tau.is_positive() || tau >= Rat::from_integer(1) {
            return Err(Error::InvalidModel(format!(
                "need a > 0 and 0 < tau < T (normalized a={a}, tau={tau})"
            )));
        }
        let (an, ad) = (*a.numer() as u128, *a.denom() as u128);
        let (tn, td) = (*tau.numer() as u128, *tau.denom() as u128);
        let g = gcd(ad, td);
        let den = ad / g * td;
        Ok(Self {
            a_num: an * (den / ad),
            tau_num: tn * (den / td),
            den,
        })
    }

    fn a(&self) -> Rat {
        Rat::new(self.a_num as i128, self.den as i128)
    }

    fn tau(&self) -> Rat {
        Rat::new(self.tau_num as i128, self.den as i128)
    }
}

fn gcd(mut a: u128, mut b: u128) -> u128 {
    while b != 0 {
        let t = a % b;
        a = b;
        b = t;
    }
    a
}

/// Combinatorial data of one staircase evaluation: the hitting index, the
/// ceiling `q = p + 1`, and whether the hit landed exactly on a multiple
/// of the period.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Hit {
    n: u64,
    q: u128,
    integer_hit: bool,
}

impl Hit {
    /// `lambda_inf / log 2` as an exact reduced fraction.
    fn key(&self) -> Rat {
        Rat::new(self.n as i128, self.q as i128)
    }
}

/// Smallest `k >= 1` with `k*a mod 1` in the closed window (`frac >= tau`
/// or `frac == 0`).
fn hit_closed(w: &ExactWindow) -> Result<Hit> {
    hit_with(w, |r, tau| r == 0 || r >= tau)
}

/// Same, but for the limit from the left: a multiple sitting exactly on the
/// window's left edge `tau` does not count, while one sitting on a period
/// multiple does (just left of it the phase is close to 1).
fn hit_left_limit(w: &ExactWindow) -> Result<Hit> {
    hit_with(w, |r, tau| r == 0 || r > tau)
}

fn hit_with(w: &ExactWindow, in_window: impl Fn(u128, u128) -> bool) -> Result<Hit> {
    let step = w.a_num % w.den;
    let mut r: u128 = 0;
    for k in 1..=RATIONAL_SEARCH_CAP {
        r += step;
        if r >= w.den {
            r -= w.den;
        }
        if in_window(r, w.tau_num) {
            let prod = k as u128 * w.a_num;
            let q = prod / w.den + if r == 0 { 0 } else { 1 };
            return Ok(Hit {
                n: k,
                q,
                integer_hit: r == 0,
            });
        }
    }
    Err(Error::WindowSearchExhausted(RATIONAL_SEARCH_CAP))
}

fn floor_mul(x: Rat, k: u64) -> Rat {
    (x * Rat::from_integer(k as i128)).floor()
}

/// Right end of the step containing `a`: walks through the exact event
/// points where some multiple `k*a'` enters or leaves the blocked window.
fn step_right_end(w: &ExactWindow) -> Result<(Rat, bool)> {
    let tau = w.tau();
    let base = hit_closed(w)?;
    let key = base.key();
    let mut x = w.a();
    let mut cur = base;
    for _ in 0..WALK_CAP {
        if cur.integer_hit {
            // N_a * a on a period multiple: strictly lower values accumulate
            // just to the right, so the step is closed here.
            return Ok((x, true));
        }
        // Earliest event to the right: the hitting multiple leaves its
        // window at q/N, or an earlier multiple reaches a window edge.
        let mut b = Rat::new(cur.q as i128, cur.n as i128);
        for k in 1..cur.n {
            let cand = (floor_mul(x, k) + tau) / Rat::from_integer(k as i128);
            if cand > x && cand < b {
                b = cand;
            }
        }
        let next = hit_closed(&ExactWindow::new(b, tau)?)?;
        if next.key() != key {
            return Ok((b, false));
        }
        x = b;
        cur = next;
    }
    Err(Error::WindowSearchExhausted(WALK_CAP as u64))
}

/// Left end of the step containing `a`; always attained.
fn step_left_end(w: &ExactWindow) -> Result<Rat> {
    let tau = w.tau();
    let key = hit_closed(w)?.key();
    let mut x = w.a();
    let mut left = hit_left_limit(w)?;
    if left.key() != key {
        return Ok(x);
    }
    for _ in 0..WALK_CAP {
        // Events to the left: the hitting multiple drops out of its window
        // component [q-1+tau, q], or an earlier multiple lands on an integer.
        let mut b = (Rat::from_integer(left.q as i128 - 1) + tau)
            / Rat::from_integer(left.n as i128);
        for k in 1..left.n {
            let fl = floor_mul(x, k);
            if fl >= Rat::from_integer(1) {
                let cand = fl / Rat::from_integer(k as i128);
                if cand < x && cand > b {
                    b = cand;
                }
            }
        }
        let next = hit_left_limit(&ExactWindow::new(b, tau)?)?;
        if next.key() != key {
            return Ok(b);
        }
        x = b;
        left = next;
    }
    Err(Error::WindowSearchExhausted(WALK_CAP as u64))
}

// ---------------------------------------------------------------------------
// Input normalization: rational fast path, float fallback
// ---------------------------------------------------------------------------

enum Normalized {
    Rational(ExactWindow),
    Float { a: f64, tau: f64 },
}

fn normalize(a: f64, tau: f64, t_period: f64) -> Result<Normalized> {
    if !(t_period > 0.0) || !(tau > 0.0) || !(tau < t_period) || !(a > 0.0) {
        return Err(Error::InvalidModel(format!(
            "need a > 0 and 0 < tau < T, got a={a}, tau={tau}, T={t_period}"
        )));
    }
    let (na, nt) = (a / t_period, tau / t_period);
    let ra = rationalize(na, PROMOTE_MAX_DEN, FLOAT_EDGE_TOL * na.max(1.0));
    let rt = rationalize(nt, PROMOTE_MAX_DEN, FLOAT_EDGE_TOL);
    if let (Some(ra), Some(rt)) = (ra, rt) {
        return Ok(Normalized::Rational(ExactWindow::new(widen(ra), widen(rt))?));
    }
    Ok(Normalized::Float { a: na, tau: nt })
}

/// Float-path window membership with ties biased into the closed window.
fn float_hit(a: f64, tau: f64, half_open: bool) -> Result<Hit> {
    for k in 1..=FLOAT_SEARCH_CAP {
        let v = k as f64 * a;
        let frac = v - v.floor();
        let integer_hit = frac <= FLOAT_EDGE_TOL || frac >= 1.0 - FLOAT_EDGE_TOL;
        let in_closed = integer_hit || frac >= tau - FLOAT_EDGE_TOL;
        let hit = if half_open {
            !integer_hit && frac >= tau - FLOAT_EDGE_TOL
        } else {
            in_closed
        };
        if hit {
            let q = if integer_hit {
                v.round() as u128
            } else {
                v.ceil() as u128
            };
            return Ok(Hit {
                n: k,
                q: q.max(1),
                integer_hit,
            });
        }
    }
    Err(Error::WindowSearchExhausted(FLOAT_SEARCH_CAP))
}

fn hit_of(a: f64, tau: f64, t_period: f64) -> Result<Hit> {
    match normalize(a, tau, t_period)? {
        Normalized::Rational(w) => hit_closed(&w),
        Normalized::Float { a, tau } => float_hit(a, tau, false),
    }
}

// ---------------------------------------------------------------------------
// Public operations
// ---------------------------------------------------------------------------

/// Smallest `k >= 1` with `k*a` in the closed blocked window `[tau, T] + NT`.
pub fn compute_na(a: f64, tau: f64, t_period: f64) -> Result<u64> {
    hit_of(a, tau, t_period).map(|h| h.n)
}

/// Smallest `k >= 1` with `k*a` in the half-open window `[tau, T) + NT`, or
/// `Infinite` when every multiple avoids it (then `N_a * a` is a period
/// multiple and all earlier multiples fall in the permitted region).
pub fn compute_ka(a: f64, tau: f64, t_period: f64) -> Result<Multiplicity> {
    let h = hit_of(a, tau, t_period)?;
    Ok(if h.integer_hit {
        Multiplicity::Infinite
    } else {
        Multiplicity::Finite(h.n)
    })
}

/// The staircase limit `N_a log2 / (ceil(N_a a / T) T)`.
pub fn lambda_infinity(a: f64, tau: f64, t_period: f64) -> Result<f64> {
    let h = hit_of(a, tau, t_period)?;
    let lambda = h.n as f64 * std::f64::consts::LN_2 / (h.q as f64 * t_period);
    // For tau/T < 1/2 and a < T the limit collapses to ceil(tau/a) * log2 / T.
    #[cfg(debug_assertions)]
    if 2.0 * tau < t_period && a < t_period {
        let k = (tau / a).ceil().max(1.0);
        let special = k * std::f64::consts::LN_2 / t_period;
        debug_assert!(
            (special - lambda).abs() <= 1e-9 * lambda.max(1.0),
            "integer-part form disagrees: {special} vs {lambda} at a={a}, tau={tau}"
        );
    }
    Ok(lambda)
}

/// Full description of the staircase step containing `a`.
pub fn staircase(a: f64, tau: f64, t_period: f64) -> Result<StaircaseResult> {
    match normalize(a, tau, t_period)? {
        Normalized::Rational(w) => {
            let h = hit_closed(&w)?;
            let (right, closed) = step_right_end(&w)?;
            let left = step_left_end(&w)?;
            Ok(build_result(a, tau, t_period, h, left, right, closed, Some(&w)))
        }
        Normalized::Float { a: na, tau: nt } => {
            let h = float_hit(na, nt, false)?;
            let (left, right, closed) = float_step_interval(na, nt, h)?;
            Ok(build_result(
                a,
                tau,
                t_period,
                h,
                Rat::new((left * 1e15) as i128, 1_000_000_000_000_000),
                Rat::new((right * 1e15) as i128, 1_000_000_000_000_000),
                closed,
                None,
            ))
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn build_result(
    a: f64,
    tau: f64,
    t_period: f64,
    h: Hit,
    left: Rat,
    right: Rat,
    closed: bool,
    w: Option<&ExactWindow>,
) -> StaircaseResult {
    let a_l = to_f64(left) * t_period;
    let a_r = to_f64(right) * t_period;
    let rate_bound = ((a_r - a) / 2.0).max(0.0).min(tau);
    let exact = w.map(|w| ExactStep {
        a: narrow(w.a()),
        tau: narrow(w.tau()),
        a_l: narrow(left),
        a_r: narrow(right),
    });
    StaircaseResult {
        n_a: h.n,
        p_a: (h.q - 1) as u64,
        lambda_inf: h.n as f64 * std::f64::consts::LN_2 / (h.q as f64 * t_period),
        a_l,
        a_r,
        right_closed: closed,
        rate_bound,
        exact,
    }
}

fn narrow(r: Rat) -> (i64, i64) {
    (*r.numer() as i64, *r.denom() as i64)
}

/// Step ends on the float path: outward doubling then bisection on the
/// exact `(N, q)` pair, which is still integer-valued even for float inputs.
fn float_step_interval(a: f64, tau: f64, h: Hit) -> Result<(f64, f64, bool)> {
    let same = |x: f64| -> Result<bool> {
        let hx = float_hit(x, tau, false)?;
        Ok(hx.key() == h.key())
    };
    // Right end.
    let mut step = (tau / h.n as f64).max(a * 1e-6);
    let mut hi = a;
    let cap = a * 1e3;
    while same(hi + step)? {
        hi += step;
        step *= 2.0;
        if hi > cap {
            return Err(Error::WindowSearchExhausted(h.n));
        }
    }
    let (mut lo_r, mut hi_r) = (hi, hi + step);
    for _ in 0..80 {
        let mid = 0.5 * (lo_r + hi_r);
        if same(mid)? {
            lo_r = mid;
        } else {
            hi_r = mid;
        }
    }
    // Left end.
    let mut step = (tau / h.n as f64).max(a * 1e-6);
    let mut lo = a;
    while lo - step > 0.0 && same(lo - step)? {
        lo -= step;
        step *= 2.0;
    }
    let (mut lo_l, mut hi_l) = ((lo - step).max(0.0), lo);
    for _ in 0..80 {
        let mid = 0.5 * (lo_l + hi_l);
        if same(mid)? {
            hi_l = mid;
        } else {
            lo_l = mid;
        }
    }
    let right = 0.5 * (lo_r + hi_r);
    let n_a_r = h.n as f64 * right;
    let closed = (n_a_r - n_a_r.round()).abs() <= 1e-9;
    Ok((hi_l, right, closed))
}

/// Ends of the step `{a' : lambda_inf(a') = lambda_inf(a)}`.
pub fn step_interval(a: f64, tau: f64, t_period: f64) -> Result<(f64, f64)> {
    let st = staircase(a, tau, t_period)?;
    Ok((st.a_l, st.a_r))
}

/// Lower bound `min((a_r - a)/2, tau)` on the convergence rate.
pub fn rate_bound(a: f64, tau: f64, t_period: f64) -> Result<f64> {
    Ok(staircase(a, tau, t_period)?.rate_bound)
}

/// Runs the deterministic jump process: unit-speed aging, reset to age 0 at
/// the first permitted time at or after reaching the majority age; a
/// division falling in the blocked window `[tau, T)` is deferred to the next
/// period start.
pub fn simulate_jump_process(
    x0: f64,
    a: f64,
    tau: f64,
    t_period: f64,
    horizon: f64,
) -> Result<JumpTrajectory> {
    if x0 < 0.0 || !horizon.is_finite() {
        return Err(Error::InvalidModel(
            "need x0 >= 0 and a finite horizon".into(),
        ));
    }
    let norm = normalize(a, tau, t_period)?;
    let nh = horizon / t_period;
    let nx0 = x0 / t_period;
    let times: Vec<f64> = match norm {
        Normalized::Rational(w) => {
            let a = w.a();
            let tau = w.tau();
            let x0r = rationalize(nx0, PROMOTE_MAX_DEN, FLOAT_EDGE_TOL)
                .map(widen)
                .unwrap_or_else(|| Rat::new((nx0 * 1e12) as i128, 1_000_000_000_000));
            let hr = Rat::new((nh * 1e12).round() as i128, 1_000_000_000_000);
            let permitted = |t: Rat| (t - t.floor()) < tau;
            let mut times = Vec::new();
            let mut t = if x0r >= a {
                Rat::from_integer(0)
            } else {
                let cand = a - x0r;
                if permitted(cand) {
                    cand
                } else {
                    cand.ceil()
                }
            };
            while t <= hr {
                times.push(to_f64(t) * t_period);
                let cand = t + a;
                t = if permitted(cand) { cand } else { cand.ceil() };
            }
            times
        }
        Normalized::Float { a, tau } => {
            let permitted = |t: f64| {
                let frac = t - t.floor();
                frac < tau - FLOAT_EDGE_TOL || frac >= 1.0 - FLOAT_EDGE_TOL
            };
            let defer = |t: f64| {
                if (t - t.round()).abs() <= FLOAT_EDGE_TOL {
                    t.round()
                } else {
                    t.ceil()
                }
            };
            let mut times = Vec::new();
            let mut t = if nx0 >= a {
                0.0
            } else {
                let cand = a - nx0;
                if permitted(cand) {
                    cand
                } else {
                    defer(cand)
                }
            };
            while t <= nh + FLOAT_EDGE_TOL {
                times.push(t * t_period);
                let cand = t + a;
                t = if permitted(cand) { cand } else { defer(cand) };
            }
            times
        }
    };
    Ok(JumpTrajectory {
        division_times: times,
        horizon,
    })
}

/// Verifies the lower-bound tube conditions: the first division time is
/// late enough, consecutive ones are separated by at least `a + eps`, and
/// each `[theta_i, theta_i + eps]` stays inside its permitted window.
pub fn check_theta_sequence(thetas: &[f64], eps: f64, a: f64, tau: f64, t_period: f64) -> bool {
    if thetas.is_empty() || eps < 0.0 {
        return false;
    }
    let (a, tau, eps) = (a / t_period, tau / t_period, eps / t_period);
    let th: Vec<f64> = thetas.iter().map(|t| t / t_period).collect();
    if th[0] < (a - 1.0 + tau).max(0.0) - FLOAT_EDGE_TOL {
        return false;
    }
    for w in th.windows(2) {
        if w[1] - (w[0] + eps) < a - FLOAT_EDGE_TOL {
            return false;
        }
    }
    for &t in &th {
        let fl = if (t - t.round()).abs() <= FLOAT_EDGE_TOL {
            t.round()
        } else {
            t.floor()
        };
        if !(t + eps < fl + tau) {
            return false;
        }
    }
    true
}

/// Scans `[lo, hi]` for the discrete exceptional set: right-closed step
/// ends, where `N_a a` is a period multiple and the staircase is continuous.
/// Steps accumulate to the right of each such point, so after recording one
/// the scan skips ahead by `resolution`.
pub fn scan_e_tau(tau: f64, t_period: f64, lo: f64, hi: f64, resolution: f64) -> Result<Vec<f64>> {
    if !(resolution > 0.0) {
        return Err(Error::InvalidModel("resolution must be positive".into()));
    }
    let mut found = Vec::new();
    let mut x = lo.max(resolution);
    for _ in 0..WALK_CAP {
        if x >= hi {
            break;
        }
        let st = staircase(x, tau, t_period)?;
        if st.right_closed {
            if st.a_r <= hi && st.a_r >= lo {
                found.push(st.a_r);
            }
            x = st.a_r + resolution;
        } else {
            x = st.a_r;
        }
    }
    found.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
    Ok(found)
}
