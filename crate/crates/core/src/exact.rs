//! Closed-form and semi-analytic oracles.
//!
//! Three independent routes to the growth rate live here: the switched
//! two-phase system whose monodromy is a product of 2x2 matrix
//! exponentials (the non-monotonicity counter-example), the implicit
//! scalar equation for constant time modulation, and the discretized
//! periodic renewal operator with its `rho(lambda) = 1` root.

use crate::error::{Error, Result};
use crate::model::{AgeModulation, DivisionKernel, RateModel};
use serde::Serialize;

/// Dense 2x2 real matrix, row major.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Matrix2(pub [[f64; 2]; 2]);

impl Matrix2 {
    pub const IDENTITY: Matrix2 = Matrix2([[1.0, 0.0], [0.0, 1.0]]);
    pub const ZERO: Matrix2 = Matrix2([[0.0, 0.0], [0.0, 0.0]]);

    pub fn trace(&self) -> f64 {
        self.0[0][0] + self.0[1][1]
    }

    pub fn det(&self) -> f64 {
        self.0[0][0] * self.0[1][1] - self.0[0][1] * self.0[1][0]
    }

    pub fn mul(&self, rhs: &Matrix2) -> Matrix2 {
        let a = &self.0;
        let b = &rhs.0;
        Matrix2([
            [
                a[0][0] * b[0][0] + a[0][1] * b[1][0],
                a[0][0] * b[0][1] + a[0][1] * b[1][1],
            ],
            [
                a[1][0] * b[0][0] + a[1][1] * b[1][0],
                a[1][0] * b[0][1] + a[1][1] * b[1][1],
            ],
        ])
    }

    pub fn apply(&self, v: [f64; 2]) -> [f64; 2] {
        [
            self.0[0][0] * v[0] + self.0[0][1] * v[1],
            self.0[1][0] * v[0] + self.0[1][1] * v[1],
        ]
    }

    fn scaled(&self, s: f64) -> Matrix2 {
        Matrix2([
            [self.0[0][0] * s, self.0[0][1] * s],
            [self.0[1][0] * s, self.0[1][1] * s],
        ])
    }

    fn add(&self, rhs: &Matrix2) -> Matrix2 {
        Matrix2([
            [self.0[0][0] + rhs.0[0][0], self.0[0][1] + rhs.0[0][1]],
            [self.0[1][0] + rhs.0[1][0], self.0[1][1] + rhs.0[1][1]],
        ])
    }

    /// Spectral radius from the characteristic polynomial: the larger real
    /// root when the discriminant is nonnegative, the complex modulus
    /// otherwise.
    pub fn spectral_radius(&self) -> f64 {
        let tr = self.trace();
        let det = self.det();
        let disc = tr * tr - 4.0 * det;
        if disc >= 0.0 {
            let s = disc.sqrt();
            let r1 = 0.5 * (tr + s);
            let r2 = 0.5 * (tr - s);
            r1.abs().max(r2.abs())
        } else {
            det.sqrt()
        }
    }
}

const DEFECTIVE_TOL: f64 = 1e-12;

/// `exp(M s)` by the closed 2x2 form. `M s = mu I + N` with `N^2` a scalar
/// matrix, so the exponential splits into hyperbolic, trigonometric or
/// Jordan branches; the Jordan branch takes over when the discriminant is
/// within `1e-12` of zero to avoid cancellation near double eigenvalues.
pub fn expm2(m: &Matrix2, s: f64) -> Matrix2 {
    let a = m.scaled(s);
    let tr = a.trace();
    let mu = 0.5 * tr;
    let disc = tr * tr - 4.0 * a.det();
    let n = a.add(&Matrix2::IDENTITY.scaled(-mu));
    let scale = mu.exp();
    if disc > DEFECTIVE_TOL {
        let delta = 0.5 * disc.sqrt();
        let c = delta.cosh();
        let sh = delta.sinh() / delta;
        Matrix2::IDENTITY.scaled(c).add(&n.scaled(sh)).scaled(scale)
    } else if disc < -DEFECTIVE_TOL {
        let delta = 0.5 * (-disc).sqrt();
        let c = delta.cos();
        let sn = delta.sin() / delta;
        Matrix2::IDENTITY.scaled(c).add(&n.scaled(sn)).scaled(scale)
    } else {
        Matrix2::IDENTITY.add(&n).scaled(scale)
    }
}

/// Parameters of the two-phase counter-example: day phase `[0, alpha)`,
/// night phase `[alpha, 1)`; individuals born during the day divide at
/// rate `a1` by day and `b1` by night, night-born ones at `a2` / `b2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TwoPhaseRates {
    pub alpha: f64,
    pub a1: f64,
    pub a2: f64,
    pub b1: f64,
    pub b2: f64,
}

impl TwoPhaseRates {
    pub fn new(alpha: f64, a1: f64, a2: f64, b1: f64, b2: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::InvalidModel("alpha must lie in (0,1)".into()));
        }
        if [a1, a2, b1, b2].iter().any(|r| !r.is_finite() || *r < 0.0) {
            return Err(Error::InvalidModel("rates must be finite and >= 0".into()));
        }
        Ok(Self { alpha, a1, a2, b1, b2 })
    }

    /// Aggregated generator during the day phase.
    pub fn m_day(&self) -> Matrix2 {
        Matrix2([[self.a1, 2.0 * self.a2], [0.0, -self.a2]])
    }

    /// Aggregated generator during the night phase.
    pub fn m_night(&self) -> Matrix2 {
        Matrix2([[-self.b1, 0.0], [2.0 * self.b1, self.b2]])
    }

    /// One-period monodromy of the aggregated populations.
    pub fn monodromy(&self) -> Matrix2 {
        expm2(&self.m_night(), 1.0 - self.alpha).mul(&expm2(&self.m_day(), self.alpha))
    }
}

/// Growth rate of the two-phase model: log of the Perron root of the
/// period monodromy.
pub fn counterexample_lambda(r: &TwoPhaseRates) -> f64 {
    r.monodromy().spectral_radius().ln()
}

/// Growth-rate surface over a `(b1, b2)` grid.
#[derive(Debug, Clone, Serialize)]
pub struct Surface {
    pub b1: Vec<f64>,
    pub b2: Vec<f64>,
    /// `lambda[i][j]` at `(b1[i], b2[j])`.
    pub lambda: Vec<Vec<f64>>,
}

pub fn counterexample_surface(
    alpha: f64,
    a1: f64,
    a2: f64,
    b1_range: (f64, f64),
    b2_range: (f64, f64),
    resolution: usize,
) -> Result<Surface> {
    if resolution < 2 {
        return Err(Error::InvalidModel("resolution must be at least 2".into()));
    }
    let axis = |(lo, hi): (f64, f64)| -> Vec<f64> {
        (0..resolution)
            .map(|i| lo + (hi - lo) * i as f64 / (resolution - 1) as f64)
            .collect()
    };
    let b1 = axis(b1_range);
    let b2 = axis(b2_range);
    let mut lambda = Vec::with_capacity(resolution);
    for &x in &b1 {
        let mut row = Vec::with_capacity(resolution);
        for &y in &b2 {
            let r = TwoPhaseRates::new(alpha, a1, a2, x, y)?;
            row.push(counterexample_lambda(&r));
        }
        lambda.push(row);
    }
    Ok(Surface { b1, b2, lambda })
}

/// Piecewise-exact trajectory of the aggregated populations `(P1, P2)`,
/// sampled at every phase switch over `periods` periods.
pub fn aggregated_ode_simulate(r: &TwoPhaseRates, periods: usize) -> Vec<(f64, [f64; 2])> {
    let day = expm2(&r.m_day(), r.alpha);
    let night = expm2(&r.m_night(), 1.0 - r.alpha);
    let mut p = [1.0, 1.0];
    let mut out = vec![(0.0, p)];
    for k in 0..periods {
        let t0 = k as f64;
        p = day.apply(p);
        out.push((t0 + r.alpha, p));
        p = night.apply(p);
        out.push((t0 + 1.0, p));
    }
    out
}

/// Growth rate extracted from the normalized aggregated dynamics; agrees
/// with `counterexample_lambda` once the power iteration has settled.
pub fn aggregated_growth_rate(r: &TwoPhaseRates, periods: usize) -> f64 {
    let g = r.monodromy();
    let mut p = [1.0, 1.0];
    let mut rate = 0.0;
    for _ in 0..periods {
        let q = g.apply(p);
        let norm = q[0].abs() + q[1].abs();
        if norm == 0.0 {
            return f64::NEG_INFINITY;
        }
        rate = norm.ln() - (p[0].abs() + p[1].abs()).ln();
        p = [q[0] / norm, q[1] / norm];
        // Renormalized, so the next ratio is just the new norm.
        let scale = p[0].abs() + p[1].abs();
        p = [p[0] / scale, p[1] / scale];
    }
    rate
}

/// The two-phase division rate as a kernel over `(t, x)`: the rate depends
/// on the birth phase `t - x` and the current phase of `t`.
#[derive(Debug, Clone, Copy)]
pub struct TwoPhaseKernel {
    pub rates: TwoPhaseRates,
}

impl TwoPhaseKernel {
    fn born_by_day(&self, birth: f64) -> bool {
        let mut frac = birth - birth.floor();
        if frac >= 1.0 - 1e-12 {
            frac = 0.0;
        }
        frac < self.rates.alpha
    }

    /// Lebesgue measure of the day phase inside `[lo, hi]`.
    fn day_measure(&self, lo: f64, hi: f64) -> f64 {
        let alpha = self.rates.alpha;
        let mut total = 0.0;
        let mut m = lo.floor();
        while m < hi {
            let seg_lo = lo.max(m);
            let seg_hi = hi.min(m + alpha);
            if seg_hi > seg_lo {
                total += seg_hi - seg_lo;
            }
            m += 1.0;
        }
        total
    }
}

impl RateModel for TwoPhaseKernel {
    fn rate(&self, t: f64, x: f64) -> f64 {
        let day_now = {
            let mut frac = t - t.floor();
            if frac >= 1.0 - 1e-12 {
                frac = 0.0;
            }
            frac < self.rates.alpha
        };
        match (self.born_by_day(t - x), day_now) {
            (true, true) => self.rates.a1,
            (true, false) => self.rates.b1,
            (false, true) => self.rates.a2,
            (false, false) => self.rates.b2,
        }
    }

    fn characteristic_integral(&self, t0: f64, x0: f64, len: f64) -> f64 {
        if len <= 0.0 {
            return 0.0;
        }
        // Birth phase is constant along a characteristic.
        let (day_rate, night_rate) = if self.born_by_day(t0 - x0) {
            (self.rates.a1, self.rates.b1)
        } else {
            (self.rates.a2, self.rates.b2)
        };
        let day = self.day_measure(t0, t0 + len);
        day_rate * day + night_rate * (len - day)
    }

    fn period(&self) -> Option<f64> {
        Some(1.0)
    }
}

// ---------------------------------------------------------------------------
// Constant time modulation: implicit scalar equation
// ---------------------------------------------------------------------------

/// Left-hand side of the implicit equation minus one:
/// `F(mu) = 2 ∫_a^inf ka B(x) exp(-mu x - ka ∫_a^x B) dx - 1`,
/// integrated cell-exactly for piecewise-constant `B`.
fn constant_psi_residual(kappa_alpha: f64, b: &AgeModulation, a: f64, mu: f64) -> f64 {
    match b {
        AgeModulation::One => 2.0 * kappa_alpha * (-mu * a).exp() / (mu + kappa_alpha) - 1.0,
        AgeModulation::Tabulated { samples, dx, .. } => {
            let mut total = 0.0;
            let mut x = a;
            let mut phi = 0.0; // kappa_alpha * ∫_a^x B
            let last = samples.len() as f64 * dx;
            loop {
                let j = ((x / dx).floor() as usize).min(samples.len() - 1);
                let bj = samples[j];
                let cell_end = ((j + 1) as f64) * dx;
                let rate = mu + kappa_alpha * bj;
                if x >= last - 1e-15 {
                    // Constant tail: integrate to infinity.
                    total += kappa_alpha * bj * (-mu * x - phi).exp() / rate;
                    break;
                }
                let h = cell_end - x;
                total += kappa_alpha * bj * (-mu * x - phi).exp() * (1.0 - (-rate * h).exp())
                    / rate;
                phi += kappa_alpha * bj * h;
                x = cell_end;
            }
            2.0 * total - 1.0
        }
    }
}

/// Growth rate for constant time modulation `psi == alpha`: the unique root
/// of the implicit equation, found by bisection on `(0, log2/a]` to 1e-12.
/// For `B == 1` the equation collapses to `2 ka e^{-mu a} = mu + ka`.
pub fn constant_psi_lambda(kappa_alpha: f64, b: &AgeModulation, a: f64) -> Result<f64> {
    if !(kappa_alpha > 0.0) {
        return Err(Error::InvalidModel("kappa*alpha must be positive".into()));
    }
    if !(a > 0.0) {
        return Err(Error::InvalidModel("majority age must be positive".into()));
    }
    let f = |mu: f64| constant_psi_residual(kappa_alpha, b, a, mu);
    let mut lo = 1e-15;
    let mut hi = std::f64::consts::LN_2 / a;
    let (flo, fhi) = (f(lo), f(hi));
    if flo < 0.0 || fhi > 1e-12 {
        if fhi > 0.0 {
            // Defensive: cannot occur for valid inputs.
            return Err(Error::NoRoot { lo, hi });
        }
    }
    for _ in 0..200 {
        if hi - lo <= 1e-12 * hi.max(1.0) {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if f(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

// ---------------------------------------------------------------------------
// Discretized periodic renewal operator
// ---------------------------------------------------------------------------

const RENEWAL_TRUNCATION: f64 = 1e-14;
const RENEWAL_MIN_PERIODS: f64 = 10.0;
const RENEWAL_MAX_PERIODS: f64 = 2000.0;

/// Builds the discretized renewal matrix acting on periodic boundary data.
///
/// The dual form of the renewal operator is used: for fixed `t` the kernel
/// in `x` is the exact differential of the survival factor, so row weights
/// telescope and the operator reproduces `rho -> 2` exactly as
/// `lambda -> 0` (up to the `1e-14` truncation of the age integral).
fn renewal_matrix(kernel: &DivisionKernel, lambda: f64, time_nodes: usize) -> Result<Vec<f64>> {
    if time_nodes < 16 {
        return Err(Error::InvalidModel("need at least 16 time nodes".into()));
    }
    if !(lambda > 0.0) {
        return Err(Error::InvalidModel("lambda must be positive".into()));
    }
    let period = kernel.period().unwrap_or(1.0);
    let m = time_nodes;
    let dt = period / m as f64;
    let a_idx = (kernel.majority_age / dt).round() as usize;
    let x_start = a_idx as f64 * dt;
    let x_cap = (RENEWAL_MAX_PERIODS * period).max(x_start + period);
    let x_floor = (RENEWAL_MIN_PERIODS * period).max(x_start + period);
    let mut matrix = vec![0.0; m * m];
    for i in 0..m {
        let t = i as f64 * dt;
        let mut x = x_start;
        let mut decay = (-kernel.characteristic_integral(t, 0.0, x_start)).exp();
        let mut k = a_idx;
        loop {
            let inc = kernel.characteristic_integral(t + x, x, dt);
            let next_decay = decay * (-inc).exp();
            let weight = 2.0 * (-lambda * x).exp() * (decay - next_decay);
            let col = (i + k) % m;
            matrix[i * m + col] += weight;
            decay = next_decay;
            x += dt;
            k += 1;
            if (decay * (-lambda * x).exp() < RENEWAL_TRUNCATION && x >= x_floor) || x > x_cap {
                break;
            }
        }
    }
    Ok(matrix)
}

/// Spectral radius of the discretized renewal operator at `lambda`, by
/// power iteration with L1 normalization.
pub fn renewal_rho(kernel: &DivisionKernel, lambda: f64, time_nodes: usize) -> Result<f64> {
    let m = time_nodes;
    let matrix = renewal_matrix(kernel, lambda, m)?;
    let mut v = vec![1.0 / m as f64; m];
    for _ in 0..100_000 {
        let mut w = vec![0.0; m];
        for i in 0..m {
            let row = &matrix[i * m..(i + 1) * m];
            w[i] = row.iter().zip(&v).map(|(a, b)| a * b).sum();
        }
        let norm: f64 = w.iter().sum();
        if norm <= f64::MIN_POSITIVE {
            return Ok(0.0);
        }
        let mut residual = 0.0;
        for (wi, vi) in w.iter_mut().zip(&v) {
            *wi /= norm;
            residual += (*wi - vi).abs();
        }
        v = w;
        if residual < 1e-13 {
            return Ok(norm);
        }
    }
    Err(Error::NonConverged {
        iterations: 100_000,
        residual: f64::NAN,
    })
}

/// The unique `lambda` with `rho(lambda) = 1`, by bisection on
/// `(1e-8, log2/a]`. The lower end is safe because `rho -> 2` near zero;
/// the upper end comes from the envelope bound `lambda <= log2/a`.
pub fn renewal_lambda(kernel: &DivisionKernel, time_nodes: usize, tol: f64) -> Result<f64> {
    if !(tol > 0.0) {
        return Err(Error::InvalidModel("tolerance must be positive".into()));
    }
    if !(kernel.majority_age > 0.0) {
        return Err(Error::InvalidModel(
            "renewal bracket needs a positive majority age".into(),
        ));
    }
    let mut lo = 1e-8;
    let mut hi = std::f64::consts::LN_2 / kernel.majority_age;
    if renewal_rho(kernel, lo, time_nodes)? < 1.0 {
        return Err(Error::NoRoot { lo, hi });
    }
    // The discrete operator may push the root marginally past the bound.
    let mut expand = 0;
    while renewal_rho(kernel, hi, time_nodes)? > 1.0 {
        hi *= 1.25;
        expand += 1;
        if expand > 8 {
            return Err(Error::NoRoot { lo, hi });
        }
    }
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if renewal_rho(kernel, mid, time_nodes)? > 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Agreement report between two independent routes to the same quantity.
#[derive(Debug, Clone, Serialize)]
pub struct OracleComparison {
    pub method_a: String,
    pub method_b: String,
    pub max_abs_diff: f64,
    pub grid: String,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::TimeModulation;
    use std::f64::consts::LN_2;

    /// Scaling-and-squaring Taylor reference, independent of the closed form.
    fn expm2_reference(m: &Matrix2, s: f64) -> Matrix2 {
        let a = m.scaled(s);
        let norm = a
            .0
            .iter()
            .flatten()
            .fold(0.0f64, |acc, v| acc.max(v.abs()));
        let k = if norm > 0.5 {
            (norm / 0.5).log2().ceil() as i32
        } else {
            0
        };
        let small = a.scaled(0.5f64.powi(k));
        let mut term = Matrix2::IDENTITY;
        let mut sum = Matrix2::IDENTITY;
        for j in 1..30 {
            term = term.mul(&small).scaled(1.0 / j as f64);
            sum = sum.add(&term);
        }
        let mut out = sum;
        for _ in 0..k {
            out = out.mul(&out);
        }
        out
    }

    fn assert_close(a: &Matrix2, b: &Matrix2, tol: f64) {
        for i in 0..2 {
            for j in 0..2 {
                let scale = 1.0 + a.0[i][j].abs().max(b.0[i][j].abs());
                assert!(
                    (a.0[i][j] - b.0[i][j]).abs() <= tol * scale,
                    "entry ({i},{j}): {} vs {}",
                    a.0[i][j],
                    b.0[i][j]
                );
            }
        }
    }

    #[test]
    fn expm2_trivial_cases() {
        assert_close(&expm2(&Matrix2::ZERO, 1.7), &Matrix2::IDENTITY, 1e-15);
        let d = expm2(&Matrix2([[1.0, 0.0], [0.0, -2.0]]), 1.0);
        assert!((d.0[0][0] - 1f64.exp()).abs() < 1e-14);
        assert!((d.0[1][1] - (-2f64).exp()).abs() < 1e-14);
        assert!(d.0[0][1].abs() < 1e-15 && d.0[1][0].abs() < 1e-15);
        let n = expm2(&Matrix2([[0.0, 1.0], [0.0, 0.0]]), 1.0);
        assert_close(&n, &Matrix2([[1.0, 1.0], [0.0, 1.0]]), 1e-15);
    }

    #[test]
    fn expm2_matches_scaling_and_squaring() {
        let cases = [
            Matrix2([[0.3, 1.2], [0.7, -0.4]]),
            Matrix2([[-2.0, 3.0], [-3.0, -2.0]]), // complex pair
            Matrix2([[1.0, 1.0], [-1e-14, 1.0]]), // near defective
            Matrix2([[10.0, 0.2], [0.0, -0.1]]),
            Matrix2([[-1.0, 0.0], [2.0, 0.5]]),
        ];
        for m in &cases {
            for s in [0.25, 0.5, 1.0, 2.0] {
                assert_close(&expm2(m, s), &expm2_reference(m, s), 1e-12);
            }
        }
    }

    #[test]
    fn triangular_counterexample_is_exact() {
        for b1 in 0..=12 {
            let r = TwoPhaseRates::new(0.5, 10.0, 0.0, b1 as f64, 0.0).unwrap();
            let expect = (0.5 * 10.0 - 0.5 * b1 as f64).max(0.0);
            assert!(
                (counterexample_lambda(&r) - expect).abs() < 1e-12,
                "b1={b1}"
            );
        }
        // alpha=0.5, a1=2, b1=1: triangular formula and an independent
        // power-method spectral radius agree on 0.5.
        let r = TwoPhaseRates::new(0.5, 2.0, 0.0, 1.0, 0.0).unwrap();
        assert!((counterexample_lambda(&r) - 0.5).abs() < 1e-12);
        let g = r.monodromy();
        let mut v = [0.5, 0.5];
        let mut rho = 1.0;
        for _ in 0..500 {
            let w = g.apply(v);
            let n = w[0].abs() + w[1].abs();
            rho = n / (v[0].abs() + v[1].abs());
            v = [w[0] / n, w[1] / n];
        }
        assert!((rho.ln() - 0.5).abs() < 1e-10);
        // All rates zero: identity monodromy.
        let r = TwoPhaseRates::new(0.5, 0.0, 0.0, 0.0, 0.0).unwrap();
        assert_eq!(counterexample_lambda(&r), 0.0);
    }

    #[test]
    fn surface_shows_non_monotonicity_for_small_b2() {
        let s = counterexample_surface(0.5, 10.0, 0.1, (0.0, 5.0), (0.01, 0.01), 6).unwrap();
        let first = s.lambda[0][0];
        let last = s.lambda[5][0];
        assert!(
            first > last,
            "lambda(b1=0)={first} should exceed lambda(b1=5)={last}"
        );
        // Larger b2 weakens the effect; just record the finite differences.
        let s_big = counterexample_surface(0.5, 10.0, 0.1, (0.0, 5.0), (8.0, 8.0), 6).unwrap();
        let diffs: Vec<f64> = s_big
            .lambda
            .windows(2)
            .map(|w| w[1][0] - w[0][0])
            .collect();
        assert_eq!(diffs.len(), 5);
    }

    #[test]
    fn surface_is_continuous_under_refinement() {
        let jump = |res: usize| -> f64 {
            let s =
                counterexample_surface(0.5, 10.0, 0.1, (0.0, 5.0), (0.0, 5.0), res).unwrap();
            let mut max = 0.0f64;
            for i in 0..res {
                for j in 0..res {
                    if i + 1 < res {
                        max = max.max((s.lambda[i + 1][j] - s.lambda[i][j]).abs());
                    }
                    if j + 1 < res {
                        max = max.max((s.lambda[i][j + 1] - s.lambda[i][j]).abs());
                    }
                }
            }
            max
        };
        let coarse = jump(8);
        let fine = jump(32);
        assert!(fine < coarse, "coarse={coarse}, fine={fine}");
    }

    #[test]
    fn aggregated_dynamics_match_monodromy() {
        let r = TwoPhaseRates::new(0.4, 2.0, 0.5, 1.0, 0.3).unwrap();
        let rate = aggregated_growth_rate(&r, 400);
        assert!((rate - counterexample_lambda(&r)).abs() < 1e-12);

        // Nonnegative orbit for nonnegative data (Metzler phases).
        for (_, p) in aggregated_ode_simulate(&r, 5) {
            assert!(p[0] >= 0.0 && p[1] >= 0.0);
        }
        // All rates zero: constant trajectory.
        let r0 = TwoPhaseRates::new(0.4, 0.0, 0.0, 0.0, 0.0).unwrap();
        for (_, p) in aggregated_ode_simulate(&r0, 3) {
            assert_eq!(p, [1.0, 1.0]);
        }
    }

    #[test]
    fn two_phase_kernel_matches_quadrature() {
        let k = TwoPhaseKernel {
            rates: TwoPhaseRates::new(0.4, 2.0, 0.5, 1.0, 0.3).unwrap(),
        };
        for &(t0, x0, len) in &[(0.0, 0.0, 2.3), (0.7, 0.2, 1.9), (1.3, 0.9, 3.1)] {
            let exact = k.characteristic_integral(t0, x0, len);
            let n = 200_000;
            let h = len / n as f64;
            let quad: f64 = (0..n)
                .map(|i| k.rate(t0 + (i as f64 + 0.5) * h, x0 + (i as f64 + 0.5) * h) * h)
                .sum();
            assert!((exact - quad).abs() < 1e-4, "t0={t0}, x0={x0}");
        }
    }

    #[test]
    fn constant_psi_root_of_scalar_equation() {
        // Independent oracle: bisection on 2 e^{-mu} = mu + 1 directly.
        let f = |mu: f64| 2.0 * (-mu).exp() - mu - 1.0;
        let (mut lo, mut hi) = (0.0, 1.0);
        for _ in 0..80 {
            let mid = 0.5 * (lo + hi);
            if f(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let oracle = 0.5 * (lo + hi);
        let mu = constant_psi_lambda(1.0, &AgeModulation::One, 1.0).unwrap();
        assert!((mu - oracle).abs() < 1e-11, "mu={mu}, oracle={oracle}");

        // kappa -> infinity pushes the rate to log2 / a.
        let big = constant_psi_lambda(1e8, &AgeModulation::One, 1.0).unwrap();
        assert!((big - LN_2).abs() < 1e-6);
        for ka in [0.3, 1.0, 7.0, 80.0] {
            let mu = constant_psi_lambda(ka, &AgeModulation::One, 1.0).unwrap();
            assert!(mu > 0.0 && mu <= LN_2 + 1e-12);
        }
    }

    #[test]
    fn constant_psi_quadrature_path_matches_closed_form() {
        // B tabulated identically one must reproduce the closed form.
        let b = AgeModulation::Tabulated {
            samples: vec![1.0; 400],
            dx: 0.05,
            nondecreasing: true,
        };
        for ka in [0.5, 1.0, 4.0] {
            let closed = constant_psi_lambda(ka, &AgeModulation::One, 1.0).unwrap();
            let quad = constant_psi_lambda(ka, &b, 1.0).unwrap();
            assert!((closed - quad).abs() < 1e-10, "ka={ka}");
        }
    }

    fn square_kernel(kappa: f64, tau: f64, a: f64) -> DivisionKernel {
        DivisionKernel::new(
            kappa,
            TimeModulation::SquareWave { tau, period: 1.0 },
            AgeModulation::One,
            a,
        )
        .unwrap()
    }

    #[test]
    fn renewal_rho_limits_and_monotonicity() {
        let k = square_kernel(1.0, 0.6, 0.22);
        let near_zero = renewal_rho(&k, 1e-6, 64).unwrap();
        assert!((near_zero - 2.0).abs() < 1e-3, "rho(0+)={near_zero}");

        let mut prev = f64::INFINITY;
        for lambda in [0.05, 0.2, 0.5, 1.0, 2.0, 4.0] {
            let rho = renewal_rho(&k, lambda, 64).unwrap();
            assert!(rho <= prev + 1e-12, "rho not decreasing at {lambda}");
            prev = rho;
        }
        assert!(prev < 1e-2, "rho should vanish at large lambda");
    }

    #[test]
    fn renewal_lambda_matches_constant_psi() {
        let k = DivisionKernel::constant(1.0, 1.0).unwrap();
        let from_renewal = renewal_lambda(&k, 512, 1e-8).unwrap();
        let from_scalar = constant_psi_lambda(1.0, &AgeModulation::One, 1.0).unwrap();
        assert!(
            (from_renewal - from_scalar).abs() < 1e-5,
            "{from_renewal} vs {from_scalar}"
        );
    }
}
