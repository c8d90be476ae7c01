//! Monotone characteristic scheme for the periodic division equation and
//! power iteration on the one-period monodromy operator.
//!
//! With `dt = dx` transport is an exact index shift, so the only work per
//! step is absorption along characteristic segments (an exact integrating
//! factor, positive for arbitrarily large rates) and the nonlocal birth
//! term. Births are fed by the absorbed mass of the same step: each parent
//! contributes exactly two children in the limit of one full division, the
//! scheme stays monotone, and the by-generation ledger balances exactly.

use crate::error::{Error, Result};
use crate::model::{DensityField, DivisionKernel, Grid, RateModel, TimeModulation};

const MASS_FLOOR: f64 = 1e-290;

/// Floquet eigenpair from power iteration on the monodromy operator.
#[derive(Debug, Clone)]
pub struct FloquetResult {
    /// Growth rate `log(mass ratio per period) / T`, averaged over the last
    /// three periods to damp subdominant oscillation.
    pub lambda: f64,
    /// Periodic eigenprofile at every grid time of one period (length
    /// `steps_per_period + 1`), normalized to `(1/T) ∫∫ N dx dt = 1`.
    /// Empty when profile storage was disabled.
    pub eigenprofile: Vec<DensityField>,
    /// L1 distance between the last two normalized iterates.
    pub residual: f64,
    /// Periods iterated.
    pub iterations: usize,
    /// Mass lost through the age truncation during the final period, for a
    /// unit-mass iterate.
    pub lost_mass: f64,
}

/// Adjoint eigenpair; the adjoint one-step operator is the exact transpose
/// of the direct one, i.e. the backward-characteristic scheme with the
/// birth term acting as a source at age zero.
#[derive(Debug, Clone)]
pub struct AdjointResult {
    /// Adjoint profile over one period, scaled so `(1/T) ∫∫ N phi dx dt = 1`.
    pub phi: Vec<DensityField>,
    /// Growth rate recovered from the adjoint iteration.
    pub lambda_check: f64,
    pub residual: f64,
    pub iterations: usize,
}

/// Iteration controls for the eigenvalue solvers.
#[derive(Debug, Clone, Copy)]
pub struct FloquetOptions {
    pub tol: f64,
    /// Cap in periods; hitting it is reported as `NonConverged`.
    pub max_iter: usize,
    pub store_profile: bool,
}

impl Default for FloquetOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 10_000,
            store_profile: true,
        }
    }
}

/// A division rate compiled onto a grid: survival factors per characteristic
/// segment, shared between the time steps that see the same modulation state.
#[derive(Debug, Clone)]
pub struct Solver {
    pub grid: Grid,
    /// Distinct per-node survival factor rows.
    states: Vec<Vec<f64>>,
    /// State index for each step of the period.
    step_state: Vec<usize>,
    /// First fertile node index (the majority age, snapped).
    pub majority_index: usize,
    /// Distance between the majority age and its grid node.
    pub majority_snap: f64,
    /// Distance between `tau` and its grid node, when the modulation has one.
    pub tau_snap: f64,
}

impl Solver {
    /// Compiles the separable kernel; `tau` and the majority age are snapped
    /// to grid nodes and the snap distances recorded.
    pub fn new(kernel: &DivisionKernel, grid: &Grid) -> Result<Self> {
        let dt = grid.dt();
        let spp = grid.steps_per_period;
        if let Some(period) = kernel.time_modulation.period() {
            if (period - grid.period()).abs() > 1e-9 * period.max(1.0) {
                return Err(Error::Misaligned(format!(
                    "modulation period {period} does not match grid period {}",
                    grid.period()
                )));
            }
        }
        let (majority_index, majority_snap) = grid.snap(kernel.majority_age);
        if kernel.majority_age >= grid.x_max {
            return Err(Error::Misaligned(
                "majority age must lie inside the age domain".into(),
            ));
        }
        let (on, off) = kernel.time_modulation.window_values();
        let mut tau_snap = 0.0;
        let (states, step_state) = match kernel.time_modulation {
            TimeModulation::Constant { .. } => {
                let row = survival_row(kernel, grid, majority_index, on);
                (vec![row], vec![0usize; spp])
            }
            TimeModulation::SquareWave { tau, .. }
            | TimeModulation::ShiftedSquareWave { tau, .. } => {
                let tau_steps = (tau / dt).round() as usize;
                tau_snap = (tau - tau_steps as f64 * dt).abs();
                if tau_steps == 0 || tau_steps >= spp {
                    return Err(Error::Misaligned(format!(
                        "tau={tau} does not leave both window phases on the grid (dt={dt})"
                    )));
                }
                let rows = vec![
                    survival_row(kernel, grid, majority_index, on),
                    survival_row(kernel, grid, majority_index, off),
                ];
                let step_state = (0..spp).map(|k| usize::from(k >= tau_steps)).collect();
                (rows, step_state)
            }
        };
        Ok(Self {
            grid: grid.clone(),
            states,
            step_state,
            majority_index,
            majority_snap,
            tau_snap,
        })
    }

    /// Compiles an arbitrary rate model: one survival row per time step,
    /// each factor an exact characteristic-segment integral.
    pub fn from_rate_model<K: RateModel + ?Sized>(kernel: &K, grid: &Grid) -> Result<Self> {
        if let Some(period) = kernel.period() {
            if (period - grid.period()).abs() > 1e-9 * period.max(1.0) {
                return Err(Error::Misaligned(format!(
                    "rate period {period} does not match grid period {}",
                    grid.period()
                )));
            }
        }
        let dt = grid.dt();
        let nodes = grid.n_nodes();
        let spp = grid.steps_per_period;
        let mut states = Vec::with_capacity(spp);
        for k in 0..spp {
            let t = k as f64 * dt;
            let row: Vec<f64> = (0..nodes)
                .map(|j| (-kernel.characteristic_integral(t, grid.age(j), dt)).exp())
                .collect();
            states.push(row);
        }
        Ok(Self {
            grid: grid.clone(),
            states,
            step_state: (0..spp).collect(),
            majority_index: 0,
            majority_snap: 0.0,
            tau_snap: 0.0,
        })
    }

    fn factors(&self, step: usize) -> &[f64] {
        &self.states[self.step_state[step % self.step_state.len()]]
    }

    /// Grid step index of time `t`; rejects off-grid times.
    pub fn step_index_of(&self, t: f64) -> Result<usize> {
        let dt = self.grid.dt();
        let i = (t / dt).round();
        if (t - i * dt).abs() > 1e-9 * t.abs().max(1.0) || i < 0.0 {
            return Err(Error::Misaligned(format!("t={t} is not a grid time")));
        }
        Ok(i as usize)
    }

    /// Advances raw values by one step. `birth_factor` scales the absorbed
    /// mass fed back at age zero (2 for the direct equation, 1 per
    /// generation, 0 to suppress births). Returns `(absorbed, outflow)` in
    /// density units.
    pub fn advance_raw(
        &self,
        step: usize,
        values: &[f64],
        out: &mut [f64],
        birth_factor: f64,
    ) -> (f64, f64) {
        let f = self.factors(step);
        let n = values.len();
        let mut absorbed = 0.0;
        for j in (1..n).rev() {
            let s = values[j - 1] * f[j - 1];
            out[j] = s;
            absorbed += values[j - 1] - s;
        }
        let last = values[n - 1] * f[n - 1];
        absorbed += values[n - 1] - last;
        out[0] = birth_factor * absorbed;
        (absorbed, last)
    }

    /// One `dt` advance of a density field; the field's `time_label` selects
    /// the step.
    pub fn step(&self, n: &DensityField) -> Result<DensityField> {
        if n.values.len() != self.grid.n_nodes() {
            return Err(Error::Misaligned("density does not match the grid".into()));
        }
        if n.values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidModel(
                "density must be finite and nonnegative".into(),
            ));
        }
        let k = self.step_index_of(n.time_label)?;
        let mut out = vec![0.0; n.values.len()];
        self.advance_raw(k, &n.values, &mut out, 2.0);
        DensityField::new(out, n.dx, n.time_label + self.grid.dt())
    }

    /// Applies the monodromy operator: one full period of steps. Returns the
    /// advanced field and the mass lost through the age truncation.
    pub fn monodromy(&self, n0: &DensityField) -> Result<(DensityField, f64)> {
        if n0.values.len() != self.grid.n_nodes() {
            return Err(Error::Misaligned("density does not match the grid".into()));
        }
        let start = self.step_index_of(n0.time_label)?;
        let mut values = n0.values.clone();
        let mut scratch = vec![0.0; values.len()];
        let mut lost = 0.0;
        for k in 0..self.grid.steps_per_period {
            let (_, outflow) = self.advance_raw(start + k, &values, &mut scratch, 2.0);
            lost += outflow * self.grid.dx;
            std::mem::swap(&mut values, &mut scratch);
        }
        let field = DensityField::new(values, n0.dx, n0.time_label + self.grid.period())?;
        Ok((field, lost))
    }

    /// Power iteration on the monodromy operator with L1 normalization.
    pub fn floquet_eigen(&self, opts: FloquetOptions) -> Result<FloquetResult> {
        let grid = &self.grid;
        let t_period = grid.period();
        let floor_idx = (grid.n_nodes() - 1).min((self.majority_index).max(0));
        let mut v = DensityField::indicator(grid, grid.age(floor_idx), grid.x_max);
        let m0 = v.mass();
        v.scale(1.0 / m0);
        let mut scratch = vec![0.0; v.values.len()];
        let mut recent = [f64::NAN; 3];
        let mut residual = f64::INFINITY;
        let mut lost_last = 0.0;
        let mut iterations = 0;
        for it in 1..=opts.max_iter {
            iterations = it;
            let mut lost = 0.0;
            let mut values = v.values.clone();
            for k in 0..grid.steps_per_period {
                let (_, outflow) = self.advance_raw(k, &values, &mut scratch, 2.0);
                lost += outflow * grid.dx;
                std::mem::swap(&mut values, &mut scratch);
            }
            let mass: f64 = values.iter().sum::<f64>() * grid.dx;
            if !(mass > MASS_FLOOR) {
                return Err(Error::Degenerate);
            }
            recent[it % 3] = mass.ln() / t_period;
            let inv = 1.0 / mass;
            residual = 0.0;
            for (w, old) in values.iter_mut().zip(&v.values) {
                *w *= inv;
                residual += (*w - old).abs();
            }
            residual *= grid.dx;
            v.values = values;
            lost_last = lost;
            if residual < opts.tol {
                break;
            }
        }
        let lambda = {
            let vals: Vec<f64> = recent.iter().copied().filter(|x| x.is_finite()).collect();
            vals.iter().sum::<f64>() / vals.len() as f64
        };
        if residual >= opts.tol {
            return Err(Error::NonConverged {
                iterations,
                residual,
            });
        }
        let eigenprofile = if opts.store_profile {
            self.profile_from(&v, lambda)?
        } else {
            Vec::new()
        };
        Ok(FloquetResult {
            lambda,
            eigenprofile,
            residual,
            iterations,
            lost_mass: lost_last,
        })
    }

    /// Replays one period from `v`, storing the lambda-detrended profile and
    /// normalizing it to `(1/T) ∫∫ N dx dt = 1`.
    fn profile_from(&self, v: &DensityField, lambda: f64) -> Result<Vec<DensityField>> {
        let grid = &self.grid;
        let dt = grid.dt();
        let mut fields = Vec::with_capacity(grid.steps_per_period + 1);
        let mut values = v.values.clone();
        let mut scratch = vec![0.0; values.len()];
        fields.push(DensityField::new(values.clone(), grid.dx, 0.0)?);
        for k in 0..grid.steps_per_period {
            self.advance_raw(k, &values, &mut scratch, 2.0);
            std::mem::swap(&mut values, &mut scratch);
            let t = (k + 1) as f64 * dt;
            let detrend = (-lambda * t).exp();
            let snap: Vec<f64> = values.iter().map(|x| x * detrend).collect();
            fields.push(DensityField::new(snap, grid.dx, t)?);
        }
        let time_avg: f64 = fields[..fields.len() - 1]
            .iter()
            .map(|f| f.mass())
            .sum::<f64>()
            / grid.steps_per_period as f64;
        let scale = 1.0 / time_avg;
        for f in &mut fields {
            f.scale(scale);
        }
        Ok(fields)
    }

    /// One backward step of the adjoint (transposed) operator: the value at
    /// time `t_k` from the value at `t_{k+1}`.
    pub fn adjoint_step_raw(&self, step: usize, phi_next: &[f64], out: &mut [f64]) {
        let f = self.factors(step);
        let n = phi_next.len();
        let phi0 = phi_next[0];
        for j in 0..n - 1 {
            out[j] = f[j] * phi_next[j + 1] + 2.0 * (1.0 - f[j]) * phi0;
        }
        out[n - 1] = 2.0 * (1.0 - f[n - 1]) * phi0;
    }

    /// Power iteration on the adjoint monodromy; `direct` supplies the
    /// profile for the joint duality normalization.
    pub fn adjoint_floquet(
        &self,
        direct: &FloquetResult,
        opts: FloquetOptions,
    ) -> Result<AdjointResult> {
        let grid = &self.grid;
        let t_period = grid.period();
        let nodes = grid.n_nodes();
        let spp = grid.steps_per_period;
        let mut v = vec![1.0; nodes];
        let mut scratch = vec![0.0; nodes];
        let mut recent = [f64::NAN; 3];
        let mut residual = f64::INFINITY;
        let mut iterations = 0;
        for it in 1..=opts.max_iter {
            iterations = it;
            let mut values = v.clone();
            for k in (0..spp).rev() {
                self.adjoint_step_raw(k, &values, &mut scratch);
                std::mem::swap(&mut values, &mut scratch);
            }
            let mass: f64 = values.iter().sum::<f64>() * grid.dx;
            if !(mass > MASS_FLOOR) {
                return Err(Error::Degenerate);
            }
            recent[it % 3] = mass.ln() / t_period;
            let inv = 1.0 / mass;
            residual = 0.0;
            for (w, old) in values.iter_mut().zip(&v) {
                *w *= inv;
                residual += (*w - old).abs();
            }
            residual *= grid.dx;
            v = values;
            if residual < opts.tol {
                break;
            }
        }
        if residual >= opts.tol {
            return Err(Error::NonConverged {
                iterations,
                residual,
            });
        }
        let lambda_check = {
            let vals: Vec<f64> = recent.iter().copied().filter(|x| x.is_finite()).collect();
            vals.iter().sum::<f64>() / vals.len() as f64
        };
        // Backward replay over one period: phi(T) = v, phi(t_k) from above,
        // detrended so the profile is periodic.
        let dt = grid.dt();
        let mut phi = vec![DensityField::new(v.clone(), grid.dx, t_period)?];
        let mut values = v;
        for k in (0..spp).rev() {
            self.adjoint_step_raw(k, &values, &mut scratch);
            std::mem::swap(&mut values, &mut scratch);
            let t = k as f64 * dt;
            let detrend = (-lambda_check * (t_period - t)).exp();
            let snap: Vec<f64> = values.iter().map(|x| x * detrend).collect();
            phi.push(DensityField::new(snap, grid.dx, t)?);
        }
        phi.reverse();
        // Duality normalization against the direct profile.
        if !direct.eigenprofile.is_empty() {
            let pairing: f64 = direct.eigenprofile[..spp]
                .iter()
                .zip(&phi[..spp])
                .map(|(n, p)| {
                    grid.dx
                        * n.values
                            .iter()
                            .zip(&p.values)
                            .map(|(a, b)| a * b)
                            .sum::<f64>()
                })
                .sum::<f64>()
                / spp as f64;
            if pairing > 0.0 {
                let scale = 1.0 / pairing;
                for f in &mut phi {
                    f.scale(scale);
                }
            }
        }
        Ok(AdjointResult {
            phi,
            lambda_check,
            residual,
            iterations,
        })
    }
}

fn survival_row(
    kernel: &DivisionKernel,
    grid: &Grid,
    majority_index: usize,
    psi_value: f64,
) -> Vec<f64> {
    let dt = grid.dt();
    (0..grid.n_nodes())
        .map(|j| {
            if j < majority_index {
                1.0
            } else {
                let lo = grid.age(j);
                let b_seg = age_integral(&kernel.age_modulation, lo, lo + dt);
                (-kernel.kappa * psi_value * b_seg).exp()
            }
        })
        .collect()
}

/// Exact `∫_lo^hi B` for the piecewise-constant age modulation.
fn age_integral(b: &crate::model::AgeModulation, lo: f64, hi: f64) -> f64 {
    use crate::model::AgeModulation;
    match b {
        AgeModulation::One => hi - lo,
        AgeModulation::Tabulated { samples, dx, .. } => {
            let mut total = 0.0;
            let mut x = lo;
            while x < hi - 1e-15 {
                let j = ((x / dx).floor().max(0.0) as usize).min(samples.len() - 1);
                let cell_end = if j + 1 >= samples.len() {
                    hi
                } else {
                    ((j + 1) as f64 * dx).min(hi)
                };
                total += samples[j] * (cell_end - x);
                x = cell_end;
            }
            total
        }
    }
}

/// One `dt` advance (compiles the kernel on the fly; build a [`Solver`] for
/// repeated stepping).
pub fn step(n: &DensityField, kernel: &DivisionKernel, grid: &Grid) -> Result<DensityField> {
    Solver::new(kernel, grid)?.step(n)
}

/// One-period evolution of `n0`.
pub fn monodromy(
    n0: &DensityField,
    kernel: &DivisionKernel,
    grid: &Grid,
) -> Result<(DensityField, f64)> {
    Solver::new(kernel, grid)?.monodromy(n0)
}

/// Floquet eigenvalue and eigenprofile of the compiled kernel.
pub fn floquet_eigen(
    kernel: &DivisionKernel,
    grid: &Grid,
    tol: f64,
    max_iter: usize,
) -> Result<FloquetResult> {
    Solver::new(kernel, grid)?.floquet_eigen(FloquetOptions {
        tol,
        max_iter,
        store_profile: true,
    })
}

/// Adjoint problem: solves the direct problem first, then iterates the
/// transposed monodromy backward in time.
pub fn adjoint_floquet(
    kernel: &DivisionKernel,
    grid: &Grid,
    tol: f64,
    max_iter: usize,
) -> Result<(FloquetResult, AdjointResult)> {
    let solver = Solver::new(kernel, grid)?;
    let direct = solver.floquet_eigen(FloquetOptions {
        tol,
        max_iter,
        store_profile: true,
    })?;
    let adjoint = solver.adjoint_floquet(
        &direct,
        FloquetOptions {
            tol,
            max_iter,
            store_profile: true,
        },
    )?;
    Ok((direct, adjoint))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exact::{constant_psi_lambda, expm2, TwoPhaseKernel, TwoPhaseRates};
    use crate::model::AgeModulation;

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
    fn zero_rate_is_a_pure_shift() {
        let grid = Grid::new(0.05, 2.0, 20).unwrap();
        let kernel = DivisionKernel::constant(0.0, 1.0).unwrap();
        let solver = Solver::new(&kernel, &grid).unwrap();
        let mut n = DensityField::indicator(&grid, 0.0, 0.5);
        let before = n.values.clone();
        n = solver.step(&n).unwrap();
        assert_eq!(n.values[0], 0.0);
        for j in 1..n.values.len() {
            assert_eq!(n.values[j], before[j - 1]);
        }
        assert!((n.mass() - (before.iter().sum::<f64>() * grid.dx)).abs() < 1e-15);
    }

    #[test]
    fn constant_rate_grows_like_the_aggregate_ode() {
        // a = 0, B = 1, psi = 1: d/dt mass = kappa * mass exactly.
        let grid = Grid::new(0.01, 3.0, 100).unwrap();
        let kernel = DivisionKernel::constant(0.7, 0.0).unwrap();
        let solver = Solver::new(&kernel, &grid).unwrap();
        let mut n = DensityField::indicator(&grid, 0.0, 1.0);
        let m0 = n.mass();
        for _ in 0..100 {
            n = solver.step(&n).unwrap();
        }
        let expect = m0 * (0.7f64).exp();
        let got = n.mass();
        assert!(
            (got - expect).abs() < 0.01 * expect,
            "mass {got} vs {expect}"
        );
    }

    #[test]
    fn mass_balance_residual_shrinks_first_order() {
        // |dM/dt - ∫K n dx| measured against the rectangle quadrature.
        let residual_at = |dx: f64| -> f64 {
            let steps = (1.0 / dx).round() as usize;
            let grid = Grid::new(dx, 3.0, steps).unwrap();
            let kernel = square_kernel(2.0, 0.6, 0.5);
            let solver = Solver::new(&kernel, &grid).unwrap();
            let mut n = DensityField::indicator(&grid, 0.0, 1.0);
            let mut worst = 0.0f64;
            for _ in 0..steps / 2 {
                let quad: f64 = n
                    .values
                    .iter()
                    .enumerate()
                    .map(|(j, v)| kernel.eval(n.time_label, grid.age(j)) * v * grid.dx)
                    .sum();
                let before = n.mass();
                n = solver.step(&n).unwrap();
                let rate = (n.mass() - before) / grid.dt();
                worst = worst.max((rate - quad).abs());
            }
            worst
        };
        let coarse = residual_at(0.01);
        let fine = residual_at(0.0025);
        assert!(
            fine < 0.6 * coarse,
            "no first-order decay: {coarse} -> {fine}"
        );
    }

    #[test]
    fn monodromy_is_linear_and_positive() {
        let grid = Grid::new(0.02, 2.0, 50).unwrap();
        let kernel = square_kernel(3.0, 0.6, 0.22);
        let solver = Solver::new(&kernel, &grid).unwrap();
        let u = DensityField::indicator(&grid, 0.0, 0.8);
        let w = DensityField::indicator(&grid, 0.6, 1.6);
        let (mu, _) = solver.monodromy(&u).unwrap();
        let (mw, _) = solver.monodromy(&w).unwrap();
        let mut combo = u.clone();
        for (c, (a, b)) in combo.values.iter_mut().zip(u.values.iter().zip(&w.values)) {
            *c = 0.3 * a + 1.7 * b;
        }
        let (mc, _) = solver.monodromy(&combo).unwrap();
        for j in 0..mc.values.len() {
            let lin = 0.3 * mu.values[j] + 1.7 * mw.values[j];
            assert!((mc.values[j] - lin).abs() <= 1e-12 * (1.0 + lin.abs()));
            assert!(mc.values[j] >= 0.0);
        }
    }

    #[test]
    fn floquet_matches_constant_modulation_oracle() {
        // x_max well past the decay scale: the truncated tail biases lambda
        // for constant modulation.
        let grid = Grid::new(0.01, 8.0, 100).unwrap();
        let kernel = DivisionKernel::constant(1.0, 1.0).unwrap();
        let result = floquet_eigen(&kernel, &grid, 1e-10, 5_000).unwrap();
        let oracle = constant_psi_lambda(1.0, &AgeModulation::One, 1.0).unwrap();
        assert!(
            (result.lambda - oracle).abs() < 0.02,
            "{} vs {}",
            result.lambda,
            oracle
        );
        // Positive periodic profile on the reachable support, normalized.
        let avg: f64 = result.eigenprofile[..grid.steps_per_period]
            .iter()
            .map(|f| f.mass())
            .sum::<f64>()
            / grid.steps_per_period as f64;
        assert!((avg - 1.0).abs() < 1e-12);
        let first = &result.eigenprofile[0];
        let last = &result.eigenprofile[grid.steps_per_period];
        assert!(first.l1_distance(last) < 1e-6);
    }

    #[test]
    fn degenerate_and_nonconverged_are_reported() {
        let grid = Grid::new(0.05, 1.0, 20).unwrap();
        let dead = DivisionKernel::new(
            0.0,
            TimeModulation::Constant { level: 0.0 },
            AgeModulation::One,
            0.5,
        )
        .unwrap();
        match floquet_eigen(&dead, &grid, 1e-10, 100) {
            Err(Error::Degenerate) => {}
            other => panic!("expected Degenerate, got {other:?}"),
        }
        let kernel = square_kernel(5.0, 0.6, 0.2);
        let grid = Grid::new(0.02, 2.0, 50).unwrap();
        match floquet_eigen(&kernel, &grid, 1e-13, 2) {
            Err(Error::NonConverged { iterations, .. }) => assert_eq!(iterations, 2),
            other => panic!("expected NonConverged, got {other:?}"),
        }
    }

    #[test]
    fn two_phase_monodromy_matches_matrix_exponentials() {
        // Aggregated populations (day-born, night-born) evolve by
        // exp((1-alpha) M_b) exp(alpha M_a) over one period.
        let rates = TwoPhaseRates::new(0.4, 2.0, 0.5, 1.0, 0.3).unwrap();
        let kernel = TwoPhaseKernel { rates };
        let dx: f64 = 2e-3;
        let spp = (1.0 / dx).round() as usize;
        let grid = Grid::new(dx, 4.0, spp).unwrap();
        let solver = Solver::from_rate_model(&kernel, &grid).unwrap();
        let n0 = DensityField::indicator(&grid, 0.0, 1.0);
        let aggregate = |n: &DensityField, t: f64| -> [f64; 2] {
            let mut p = [0.0, 0.0];
            for (j, v) in n.values.iter().enumerate() {
                let birth = t - grid.age(j);
                let frac = birth - birth.floor();
                let day = frac < rates.alpha || frac >= 1.0 - 1e-12;
                if day {
                    p[0] += v * grid.dx;
                } else {
                    p[1] += v * grid.dx;
                }
            }
            p
        };
        let p0 = aggregate(&n0, 0.0);
        let (n1, _) = solver.monodromy(&n0).unwrap();
        let got = aggregate(&n1, 1.0);
        let g = expm2(&rates.m_night(), 1.0 - rates.alpha).mul(&expm2(&rates.m_day(), rates.alpha));
        let expect = g.apply(p0);
        for i in 0..2 {
            assert!(
                (got[i] - expect[i]).abs() < 30.0 * dx * expect[i].max(1.0),
                "component {i}: {} vs {}",
                got[i],
                expect[i]
            );
        }
    }

    #[test]
    fn adjoint_constant_kernel_has_flat_phi() {
        let grid = Grid::new(0.01, 5.0, 100).unwrap();
        let kernel = DivisionKernel::constant(0.8, 0.0).unwrap();
        let (direct, adjoint) = adjoint_floquet(&kernel, &grid, 1e-10, 5_000).unwrap();
        assert!((adjoint.lambda_check - direct.lambda).abs() < 10.0 * grid.dx);
        // phi constant in age away from the truncation tail.
        let phi0 = &adjoint.phi[0].values;
        let keep = (0.4 * phi0.len() as f64) as usize;
        let head = phi0[..keep].to_vec();
        let mean: f64 = head.iter().sum::<f64>() / keep as f64;
        for v in head {
            assert!((v - mean).abs() < 0.05 * mean, "{v} vs {mean}");
        }
    }

    #[test]
    fn duality_pairing_is_constant_in_time() {
        let grid = Grid::new(0.02, 2.0, 50).unwrap();
        let kernel = square_kernel(4.0, 0.6, 0.22);
        let (direct, adjoint) = adjoint_floquet(&kernel, &grid, 1e-10, 10_000).unwrap();
        assert!((adjoint.lambda_check - direct.lambda).abs() < 10.0 * grid.dx);
        let spp = grid.steps_per_period;
        let pairings: Vec<f64> = (0..spp)
            .map(|k| {
                grid.dx
                    * direct.eigenprofile[k]
                        .values
                        .iter()
                        .zip(&adjoint.phi[k].values)
                        .map(|(a, b)| a * b)
                        .sum::<f64>()
            })
            .collect();
        let mean: f64 = pairings.iter().sum::<f64>() / spp as f64;
        assert!((mean - 1.0).abs() < 1e-9, "normalization drifted: {mean}");
        for p in &pairings {
            assert!(
                (p - mean).abs() <= 12.0 * grid.dx * mean,
                "pairing drift: {p} vs {mean}"
            );
        }
    }

    #[test]
    fn comparison_principle_on_masses() {
        let grid = Grid::new(0.02, 2.0, 50).unwrap();
        let k1 = square_kernel(5.0, 0.6, 0.3);
        let k2 = square_kernel(10.0, 0.6, 0.3);
        let s1 = Solver::new(&k1, &grid).unwrap();
        let s2 = Solver::new(&k2, &grid).unwrap();
        let mut n1 = DensityField::indicator(&grid, 0.0, 1.0);
        let mut n2 = n1.clone();
        for _ in 0..3 {
            for k in 0..grid.steps_per_period {
                let mut o1 = vec![0.0; n1.values.len()];
                let mut o2 = vec![0.0; n2.values.len()];
                s1.advance_raw(k, &n1.values, &mut o1, 2.0);
                s2.advance_raw(k, &n2.values, &mut o2, 2.0);
                n1.values = o1;
                n2.values = o2;
                let m1 = n1.mass();
                let m2 = n2.mass();
                assert!(m2 >= m1 - 1e-9, "ordering broken: {m2} < {m1}");
            }
        }
    }

    #[test]
    fn lambda_monotone_in_kappa() {
        let grid = Grid::new(0.02, 3.0, 50).unwrap();
        let mut prev = -1.0;
        for kappa in [1.0, 5.0, 20.0] {
            let kernel = square_kernel(kappa, 0.6, 0.22);
            let r = floquet_eigen(&kernel, &grid, 1e-9, 10_000).unwrap();
            assert!(
                r.lambda >= prev - 2.0 * grid.dx,
                "kappa={kappa}: {} < {prev}",
                r.lambda
            );
            prev = r.lambda;
        }
    }

    #[test]
    fn lambda_respects_staircase_envelope() {
        let grid = Grid::new(0.02, 2.0, 50).unwrap();
        let kernel = square_kernel(50.0, 0.6, 0.22);
        let r = floquet_eigen(&kernel, &grid, 1e-9, 10_000).unwrap();
        let linf = crate::staircase::lambda_infinity(0.22, 0.6, 1.0).unwrap();
        assert!(r.lambda <= linf + 10.0 * grid.dx);
        assert!(r.lambda >= 0.0);
        assert!(r.lambda <= std::f64::consts::LN_2 / 0.22 + 2.0 * grid.dx);
    }

    #[test]
    fn refinement_is_first_order() {
        let lambda_at = |dx: f64| -> f64 {
            let spp = (1.0 / dx).round() as usize;
            let grid = Grid::new(dx, 10.0, spp).unwrap();
            let kernel = DivisionKernel::constant(1.0, 1.0).unwrap();
            floquet_eigen(&kernel, &grid, 1e-10, 5_000).unwrap().lambda
        };
        let truth = constant_psi_lambda(1.0, &AgeModulation::One, 1.0).unwrap();
        let e1 = (lambda_at(0.02) - truth).abs();
        let e2 = (lambda_at(0.01) - truth).abs();
        let ratio = e1 / e2;
        assert!(
            (1.3..3.2).contains(&ratio),
            "error ratio {ratio} not first order ({e1} -> {e2})"
        );
    }

    #[test]
    fn rejects_misaligned_time() {
        let grid = Grid::new(0.1, 1.0, 10).unwrap();
        let kernel = DivisionKernel::constant(1.0, 0.5).unwrap();
        let solver = Solver::new(&kernel, &grid).unwrap();
        let mut n = DensityField::indicator(&grid, 0.0, 1.0);
        n.time_label = 0.05;
        assert!(solver.step(&n).is_err());
    }
}
