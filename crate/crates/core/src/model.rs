//! Division-rate model family, grids and density fields.
//!
//! The division rate has the separated form `K(t,x) = kappa * psi(t) * B(x) * 1[x >= a]`
//! with `psi` T-periodic. Everything here is immutable after construction and
//! safe to share across threads.

use crate::error::{Error, Result};
use crate::rational::rationalize;
use serde::{Deserialize, Serialize};

const EDGE_TOL: f64 = 1e-12;
const RATIONAL_MAX_DEN: i64 = 1_000_000;

/// Time modulation `psi(t)`, evaluated without phase drift across periods.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TimeModulation {
    /// `psi == level` for all t.
    Constant { level: f64 },
    /// 1 on `[0, tau)`, 0 on `[tau, period)`, extended periodically.
    SquareWave { tau: f64, period: f64 },
    /// Square wave plus a constant floor `epsilon`.
    ShiftedSquareWave { tau: f64, period: f64, epsilon: f64 },
}

impl TimeModulation {
    pub fn validate(&self) -> Result<()> {
        match *self {
            TimeModulation::Constant { level } => {
                if !(level >= 0.0) {
                    return Err(Error::InvalidModel("constant level must be >= 0".into()));
                }
            }
            TimeModulation::SquareWave { tau, period }
            | TimeModulation::ShiftedSquareWave { tau, period, .. } => {
                if !(period > 0.0) || !(tau > 0.0) || !(tau < period) {
                    return Err(Error::InvalidModel(format!(
                        "square wave needs 0 < tau < period, got tau={tau}, period={period}"
                    )));
                }
                if let TimeModulation::ShiftedSquareWave { epsilon, .. } = *self {
                    if !(epsilon >= 0.0) {
                        return Err(Error::InvalidModel("epsilon must be >= 0".into()));
                    }
                }
            }
        }
        Ok(())
    }

    /// Period of the modulation; `None` for the constant variant.
    pub fn period(&self) -> Option<f64> {
        match *self {
            TimeModulation::Constant { .. } => None,
            TimeModulation::SquareWave { period, .. }
            | TimeModulation::ShiftedSquareWave { period, .. } => Some(period),
        }
    }

    /// Window length `tau`; `None` for the constant variant.
    pub fn tau(&self) -> Option<f64> {
        match *self {
            TimeModulation::Constant { .. } => None,
            TimeModulation::SquareWave { tau, .. }
            | TimeModulation::ShiftedSquareWave { tau, .. } => Some(tau),
        }
    }

    /// Values taken inside and outside the permitted window.
    pub fn window_values(&self) -> (f64, f64) {
        match *self {
            TimeModulation::Constant { level } => (level, level),
            TimeModulation::SquareWave { .. } => (1.0, 0.0),
            TimeModulation::ShiftedSquareWave { epsilon, .. } => (1.0 + epsilon, epsilon),
        }
    }

    /// True when the phase of `t` lies in the open window `[0, tau)`.
    ///
    /// `t` is reduced modulo the period exactly when `t/period` is rational
    /// (within 1e-12); otherwise a floating reduction with 1e-12 edge
    /// tolerance is used, biasing window-edge ties onto the blocked side.
    pub fn in_window(&self, t: f64) -> bool {
        let (tau, period) = match *self {
            TimeModulation::Constant { .. } => return true,
            TimeModulation::SquareWave { tau, period }
            | TimeModulation::ShiftedSquareWave { tau, period, .. } => (tau, period),
        };
        let phase = t / period;
        let cut = tau / period;
        if let (Some(rp), Some(rc)) = (
            rationalize(phase, RATIONAL_MAX_DEN, EDGE_TOL),
            rationalize(cut, RATIONAL_MAX_DEN, EDGE_TOL),
        ) {
            let frac = rp - rp.floor();
            return frac < rc;
        }
        let mut u = phase - phase.floor();
        if u >= 1.0 - EDGE_TOL {
            u = 0.0;
        }
        u < cut - EDGE_TOL
    }

    /// `psi(t)`.
    pub fn value(&self, t: f64) -> f64 {
        let (on, off) = self.window_values();
        if self.in_window(t) {
            on
        } else {
            off
        }
    }
}

/// Age modulation `B(x)`: identically one, or piecewise constant samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum AgeModulation {
    One,
    /// `samples[j]` is the value on `[j*dx, (j+1)*dx)`; the last sample
    /// extends to all larger ages.
    Tabulated {
        samples: Vec<f64>,
        dx: f64,
        nondecreasing: bool,
    },
}

impl AgeModulation {
    pub fn validate(&self) -> Result<()> {
        if let AgeModulation::Tabulated {
            samples,
            dx,
            nondecreasing,
        } = self
        {
            if samples.is_empty() {
                return Err(Error::InvalidModel("tabulated B needs samples".into()));
            }
            if !(*dx > 0.0) {
                return Err(Error::InvalidModel("tabulated B needs dx > 0".into()));
            }
            if samples.iter().any(|v| !v.is_finite() || *v <= 0.0) {
                return Err(Error::InvalidModel(
                    "B samples must be finite and strictly positive".into(),
                ));
            }
            if *nondecreasing && samples.windows(2).any(|w| w[1] < w[0]) {
                return Err(Error::InvalidModel(
                    "B flagged nondecreasing but samples decrease".into(),
                ));
            }
        }
        Ok(())
    }

    /// `B(x)`; the last tabulated sample extends beyond the table.
    pub fn value(&self, x: f64) -> f64 {
        match self {
            AgeModulation::One => 1.0,
            AgeModulation::Tabulated { samples, dx, .. } => {
                let j = ((x / dx).floor().max(0.0) as usize).min(samples.len() - 1);
                samples[j]
            }
        }
    }

    /// Ages at which `B` changes value, restricted to `(lo, hi)`.
    fn breakpoints_in(&self, lo: f64, hi: f64, out: &mut Vec<f64>) {
        if let AgeModulation::Tabulated { samples, dx, .. } = self {
            let j0 = (lo / dx).floor().max(0.0) as usize;
            let j1 = ((hi / dx).ceil().max(0.0) as usize).min(samples.len());
            for j in j0..=j1 {
                let b = j as f64 * dx;
                if b > lo && b < hi {
                    out.push(b);
                }
            }
        }
    }
}

/// A division rate that the characteristic solvers can run with.
pub trait RateModel: Sync {
    /// `K(t, x)`.
    fn rate(&self, t: f64, x: f64) -> f64;

    /// `∫_0^len K(t0+s, x0+s) ds` along the unit-speed characteristic
    /// through `(t0, x0)`, computed exactly for piecewise-constant data.
    fn characteristic_integral(&self, t0: f64, x0: f64, len: f64) -> f64;

    /// Period of the time dependence, if the rate has one.
    fn period(&self) -> Option<f64>;
}

/// The separated division rate `K(t,x) = kappa * psi(t) * B(x) * 1[x >= a]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DivisionKernel {
    pub kappa: f64,
    pub time_modulation: TimeModulation,
    pub age_modulation: AgeModulation,
    pub majority_age: f64,
}

impl DivisionKernel {
    pub fn new(
        kappa: f64,
        time_modulation: TimeModulation,
        age_modulation: AgeModulation,
        majority_age: f64,
    ) -> Result<Self> {
        if !(kappa >= 0.0) || !kappa.is_finite() {
            return Err(Error::InvalidModel("kappa must be finite and >= 0".into()));
        }
        if !(majority_age >= 0.0) || !majority_age.is_finite() {
            return Err(Error::InvalidModel(
                "majority age must be finite and >= 0".into(),
            ));
        }
        time_modulation.validate()?;
        age_modulation.validate()?;
        Ok(Self {
            kappa,
            time_modulation,
            age_modulation,
            majority_age,
        })
    }

    /// Uniform rate `kappa` above the majority age, zero below.
    pub fn constant(kappa: f64, majority_age: f64) -> Result<Self> {
        Self::new(
            kappa,
            TimeModulation::Constant { level: 1.0 },
            AgeModulation::One,
            majority_age,
        )
    }

    pub fn eval(&self, t: f64, x: f64) -> f64 {
        if x < self.majority_age {
            return 0.0;
        }
        self.kappa * self.time_modulation.value(t) * self.age_modulation.value(x)
    }
}

impl RateModel for DivisionKernel {
    fn rate(&self, t: f64, x: f64) -> f64 {
        self.eval(t, x)
    }

    fn characteristic_integral(&self, t0: f64, x0: f64, len: f64) -> f64 {
        debug_assert!(len >= 0.0);
        if self.kappa == 0.0 || len <= 0.0 {
            return 0.0;
        }
        // The indicator turns on at age a: drop the infertile prefix.
        let skip = (self.majority_age - x0).max(0.0);
        if skip >= len {
            return 0.0;
        }
        let (t_lo, t_hi) = (t0 + skip, t0 + len);
        let mut cuts = vec![t_lo, t_hi];
        if let (Some(period), Some(tau)) =
            (self.time_modulation.period(), self.time_modulation.tau())
        {
            let m0 = (t_lo / period).floor() as i64 - 1;
            let m1 = (t_hi / period).floor() as i64 + 1;
            for m in m0..=m1 {
                for edge in [m as f64 * period, m as f64 * period + tau] {
                    if edge > t_lo && edge < t_hi {
                        cuts.push(edge);
                    }
                }
            }
        }
        // Age breakpoints map to time cuts along the characteristic.
        let mut ages = Vec::new();
        self.age_modulation
            .breakpoints_in(x0 + skip, x0 + len, &mut ages);
        for a in ages {
            cuts.push(t0 + (a - x0));
        }
        cuts.sort_by(|a, b| a.partial_cmp(b).unwrap());
        cuts.dedup();
        let mut total = 0.0;
        for w in cuts.windows(2) {
            let (lo, hi) = (w[0], w[1]);
            if hi <= lo {
                continue;
            }
            let mid = 0.5 * (lo + hi);
            let piece = self.kappa
                * self.time_modulation.value(mid)
                * self.age_modulation.value(x0 + (mid - t0));
            total += piece * (hi - lo);
        }
        total
    }

    fn period(&self) -> Option<f64> {
        self.time_modulation.period()
    }
}

/// `∫_v^t K(s, s - v) ds`: the division-rate exposure of an individual
/// born at time `v`, up to time `t`.
pub fn survival_integral<K: RateModel + ?Sized>(kernel: &K, v: f64, t: f64) -> Result<f64> {
    if v > t {
        return Err(Error::InvalidModel(format!(
            "birth time v={v} must not exceed t={t}"
        )));
    }
    Ok(kernel.characteristic_integral(v, 0.0, t - v))
}

/// Uniform age/time grid with the unit-CFL coupling `dt = dx`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub dx: f64,
    pub x_max: f64,
    pub steps_per_period: usize,
}

impl Grid {
    pub fn new(dx: f64, x_max: f64, steps_per_period: usize) -> Result<Self> {
        if !(dx > 0.0) || !dx.is_finite() {
            return Err(Error::Misaligned("dx must be positive".into()));
        }
        if steps_per_period == 0 {
            return Err(Error::Misaligned("steps_per_period must be positive".into()));
        }
        let ratio = x_max / dx;
        if !(ratio >= 1.0) || (ratio - ratio.round()).abs() > 1e-9 * ratio.max(1.0) {
            return Err(Error::Misaligned(format!(
                "x_max={x_max} must be a positive integer multiple of dx={dx}"
            )));
        }
        Ok(Self {
            dx,
            x_max,
            steps_per_period,
        })
    }

    /// Grid for one period `t_period`, with `x_max` snapped up to a node.
    pub fn for_period(t_period: f64, dx_target: f64, x_max: f64) -> Result<Self> {
        if !(t_period > 0.0) || !(dx_target > 0.0) {
            return Err(Error::Misaligned("period and dx must be positive".into()));
        }
        let steps = (t_period / dx_target).round().max(1.0) as usize;
        let dx = t_period / steps as f64;
        let nodes = (x_max / dx).ceil().max(1.0);
        Grid::new(dx, nodes * dx, steps)
    }

    pub fn dt(&self) -> f64 {
        self.dx
    }

    pub fn period(&self) -> f64 {
        self.steps_per_period as f64 * self.dx
    }

    /// Number of age nodes, including both endpoints.
    pub fn n_nodes(&self) -> usize {
        (self.x_max / self.dx).round() as usize + 1
    }

    pub fn age(&self, j: usize) -> f64 {
        j as f64 * self.dx
    }

    /// Nearest node index for `x`, with the snap distance.
    pub fn snap(&self, x: f64) -> (usize, f64) {
        let j = (x / self.dx).round().max(0.0) as usize;
        let j = j.min(self.n_nodes() - 1);
        (j, (x - self.age(j)).abs())
    }
}

/// Nonnegative grid function `n(t, ·)` over ages.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityField {
    pub values: Vec<f64>,
    pub dx: f64,
    pub time_label: f64,
}

impl DensityField {
    pub fn new(values: Vec<f64>, dx: f64, time_label: f64) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidModel(
                "density values must be finite and nonnegative".into(),
            ));
        }
        Ok(Self {
            values,
            dx,
            time_label,
        })
    }

    /// Indicator of `[lo, hi]` on the grid.
    pub fn indicator(grid: &Grid, lo: f64, hi: f64) -> Self {
        let values = (0..grid.n_nodes())
            .map(|j| {
                let x = grid.age(j);
                if x >= lo - 1e-15 && x <= hi + 1e-15 {
                    1.0
                } else {
                    0.0
                }
            })
            .collect();
        Self {
            values,
            dx: grid.dx,
            time_label: 0.0,
        }
    }

    /// L1 mass `dx * sum(values)`.
    pub fn mass(&self) -> f64 {
        self.dx * self.values.iter().sum::<f64>()
    }

    pub fn scale(&mut self, factor: f64) {
        for v in &mut self.values {
            *v *= factor;
        }
    }

    pub fn l1_distance(&self, other: &DensityField) -> f64 {
        self.dx
            * self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| (a - b).abs())
                .sum::<f64>()
    }
}

/// Outcome of the structural monotonicity check.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MonotonicityReport {
    pub holds: bool,
    pub witness: Option<MonotonicityWitness>,
}

/// First violation found: delaying the birth from `earlier_birth` to
/// `later_birth` increased the exposure integral at `time`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MonotonicityWitness {
    pub earlier_birth: f64,
    pub later_birth: f64,
    pub time: f64,
    pub integral_earlier: f64,
    pub integral_later: f64,
}

/// Checks the comparison-principle hypothesis on the grid: for every grid
/// time `t <= horizon`, the exposure `v -> ∫_v^t K(s, s-v) ds` must be
/// nonincreasing in the birth time `v` (equivalently, the survival
/// probability `exp(-∫)` is nondecreasing: delaying a birth cannot lower
/// survival). Violations are reported with the witnessing triple.
pub fn check_monotonicity_condition<K: RateModel + ?Sized>(
    kernel: &K,
    grid: &Grid,
    horizon: f64,
) -> MonotonicityReport {
    let dt = grid.dt();
    let steps = (horizon / dt).round() as usize;
    for i in 1..=steps {
        let t = i as f64 * dt;
        let mut prev = kernel.characteristic_integral(0.0, 0.0, t);
        for k in 1..=i {
            let v = k as f64 * dt;
            let cur = kernel.characteristic_integral(v, 0.0, t - v);
            if cur > prev + EDGE_TOL {
                return MonotonicityReport {
                    holds: false,
                    witness: Some(MonotonicityWitness {
                        earlier_birth: v - dt,
                        later_birth: v,
                        time: t,
                        integral_earlier: prev,
                        integral_later: cur,
                    }),
                };
            }
            prev = cur;
        }
    }
    MonotonicityReport {
        holds: true,
        witness: None,
    }
}

// ---------------------------------------------------------------------------
// JSON model descriptor
// ---------------------------------------------------------------------------

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelDescriptor {
    kappa: f64,
    psi: PsiDescriptor,
    #[serde(rename = "B")]
    b: BDescriptor,
    a: f64,
    grid: GridDescriptor,
}

#[derive(Debug, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
enum PsiDescriptor {
    Constant { level: f64 },
    SquareWave { tau: f64, period: f64 },
    ShiftedSquareWave { tau: f64, period: f64, epsilon: f64 },
}

#[derive(Debug, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
enum BDescriptor {
    One,
    Tabulated {
        samples: Vec<f64>,
        dx: f64,
        #[serde(default)]
        nondecreasing: bool,
    },
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct GridDescriptor {
    dx: f64,
    x_max: f64,
    steps_per_period: usize,
}

/// Parses the JSON model descriptor, rejecting unknown fields.
pub fn parse_model(json: &str) -> Result<(DivisionKernel, Grid)> {
    let d: ModelDescriptor =
        serde_json::from_str(json).map_err(|e| Error::Descriptor(e.to_string()))?;
    let psi = match d.psi {
        PsiDescriptor::Constant { level } => TimeModulation::Constant { level },
        PsiDescriptor::SquareWave { tau, period } => TimeModulation::SquareWave { tau, period },
        PsiDescriptor::ShiftedSquareWave {
            tau,
            period,
            epsilon,
        } => TimeModulation::ShiftedSquareWave {
            tau,
            period,
            epsilon,
        },
    };
    let b = match d.b {
        BDescriptor::One => AgeModulation::One,
        BDescriptor::Tabulated {
            samples,
            dx,
            nondecreasing,
        } => AgeModulation::Tabulated {
            samples,
            dx,
            nondecreasing,
        },
    };
    let kernel = DivisionKernel::new(d.kappa, psi, b, d.a)?;
    let grid = Grid::new(d.grid.dx, d.grid.x_max, d.grid.steps_per_period)?;
    Ok((kernel, grid))
}
