//! Brute-force cross-checks for the closed-form quantities: fixed-step
//! RK4 simulation with trapezoid energy integration, finite-difference
//! eigenvalue movement, and exact per-sample recomputation of the total
//! action.
//!
//! Nothing here goes through the modal coordinates used by `action`.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rayon::prelude::*;

use crate::action::{oscillation_energy, total_action};
use crate::case::{BusId, NetworkCase};
use crate::error::{Error, Result};
use crate::modal::{decompose, transform_disturbance};
use crate::network::energized_buses;
use crate::powerflow::{solve_perturbed, solve_power_flow};
use crate::system::{build_system_matrix, SystemModel};

pub const DEFAULT_DT: f64 = 1e-3;
/// Terminal energy must fall below this fraction of the peak.
pub const TAIL_RATIO: f64 = 1e-8;
/// Modes closer than this cannot be paired reliably.
pub const MODE_SEPARATION: f64 = 1e-6;

#[derive(Clone, Debug)]
pub struct Trajectory {
    pub dt: f64,
    pub times: Vec<f64>,
    /// One row per time step.
    pub states: DMatrix<f64>,
}

impl Trajectory {
    pub fn steps(&self) -> usize {
        self.times.len()
    }

    pub fn state(&self, step: usize) -> DVector<f64> {
        self.states.row(step).transpose()
    }
}

/// Largest eigenvalue magnitude, from nalgebra's own Schur routine.
fn spectral_radius(a: &DMatrix<f64>) -> f64 {
    a.complex_eigenvalues()
        .iter()
        .map(|l| l.norm())
        .fold(0.0, f64::max)
}

/// Largest real part of the spectrum.
pub fn max_real_part(a: &DMatrix<f64>) -> f64 {
    a.complex_eigenvalues()
        .iter()
        .map(|l| l.re)
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Horizon `10 / |max Re λ|`.
pub fn default_horizon(model: &SystemModel) -> f64 {
    10.0 / max_real_part(&model.a).abs()
}

/// Integrates `Δẋ = AΔx` with classical fixed-step RK4 on `[0, T]`.
pub fn simulate_linear(model: &SystemModel, dx0: &DVector<f64>, t_end: f64, dt: f64) -> Result<Trajectory> {
    let n = model.n();
    if dx0.len() != n {
        return Err(Error::DimensionMismatch { expected: n, found: dx0.len() });
    }
    if !(dt > 0.0 && t_end >= dt) {
        return Err(Error::Validation(format!("need T >= dt > 0, got T = {t_end}, dt = {dt}")));
    }
    let rho = spectral_radius(&model.a);
    let limit = if rho > 0.0 { 0.1 / rho } else { f64::INFINITY };
    if dt > limit {
        return Err(Error::StepTooLarge { dt, limit });
    }

    let steps = (t_end / dt).round() as usize;
    let a = &model.a;
    let mut states = DMatrix::<f64>::zeros(steps + 1, n);
    let mut x = dx0.clone();
    states.set_row(0, &x.transpose());
    for s in 1..=steps {
        let k1 = a * &x;
        let k2 = a * (&x + &k1 * (0.5 * dt));
        let k3 = a * (&x + &k2 * (0.5 * dt));
        let k4 = a * (&x + &k3 * dt);
        x += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);
        states.set_row(s, &x.transpose());
    }
    Ok(Trajectory {
        dt,
        times: (0..=steps).map(|s| s as f64 * dt).collect(),
        states,
    })
}

fn energies(traj: &Trajectory, model: &SystemModel) -> Result<Vec<f64>> {
    (0..traj.steps())
        .map(|s| oscillation_energy(model, &traj.state(s)))
        .collect()
}

fn trapezoid(values: &[f64], dt: f64) -> f64 {
    match values {
        [] | [_] => 0.0,
        [first, inner @ .., last] => dt * (0.5 * (first + last) + inner.iter().sum::<f64>()),
    }
}

/// Trapezoid integral of the oscillation energy over the whole grid.
pub fn numeric_action(traj: &Trajectory, model: &SystemModel) -> Result<f64> {
    Ok(trapezoid(&energies(traj, model)?, traj.dt))
}

/// Trapezoid integral of the oscillation energy, requiring the tail to
/// have decayed.
pub fn numeric_total_action(traj: &Trajectory, model: &SystemModel) -> Result<f64> {
    let e = energies(traj, model)?;
    let peak = e.iter().copied().fold(0.0, f64::max);
    if peak == 0.0 {
        return Ok(0.0);
    }
    let ratio = e.last().copied().unwrap_or(0.0) / peak;
    if ratio > TAIL_RATIO {
        return Err(Error::TailNotDecayed { ratio });
    }
    Ok(trapezoid(&e, traj.dt))
}

/// Modal reconstruction `M·e^{Λt}·z₀`, used to cross-check trajectories.
pub fn modal_state(model: &SystemModel, dx0: &DVector<f64>, t: f64) -> Result<DVector<f64>> {
    let dec = decompose(model)?;
    let z0 = transform_disturbance(&dec, dx0)?;
    let zt = DVector::from_iterator(
        dec.n(),
        (0..dec.n()).map(|i| (dec.eigenvalues[i] * t).exp() * z0[i]),
    );
    Ok((&dec.right * zt).map(|c| c.re))
}

/// Central-difference eigenvalue movement `Δλ/ΔP_w` for each mode of the
/// base system, in base decomposition order. Modes at `P_w ± h` are paired
/// with base modes by nearest neighbour.
pub fn fd_mode_movement(
    case: &NetworkCase,
    bus: BusId,
    gain: f64,
    p_w: f64,
    h: f64,
) -> Result<Vec<Complex64>> {
    let eigs = |pw: f64| -> Result<Vec<Complex64>> {
        let eq = solve_perturbed(case, pw)?;
        Ok(decompose(&build_system_matrix(case, &eq, Some(bus), gain)?)?.eigenvalues)
    };
    let base = decompose(&build_system_matrix(case, &solve_power_flow(case, p_w)?, Some(bus), gain)?)?.eigenvalues;
    let wind = case.bus_index(case.wind_bus).unwrap();
    if !energized_buses(case)[wind] {
        return Ok(vec![Complex64::new(0.0, 0.0); base.len()]);
    }

    for (i, a) in base.iter().enumerate() {
        if base.iter().skip(i + 1).any(|b| (a - b).norm() < MODE_SEPARATION) {
            return Err(Error::ModeMatchingAmbiguous { re: a.re, im: a.im });
        }
    }
    let hi = match_modes(&base, &eigs(p_w + h)?)?;
    let lo = match_modes(&base, &eigs(p_w - h)?)?;
    Ok(hi.iter().zip(&lo).map(|(a, b)| (a - b) / (2.0 * h)).collect())
}

fn match_modes(base: &[Complex64], moved: &[Complex64]) -> Result<Vec<Complex64>> {
    let mut used = vec![false; moved.len()];
    let mut out = Vec::with_capacity(base.len());
    for b in base {
        let j = (0..moved.len())
            .min_by(|&x, &y| (moved[x] - b).norm().total_cmp(&(moved[y] - b).norm()))
            .ok_or(Error::ModeMatchingAmbiguous { re: b.re, im: b.im })?;
        if used[j] {
            return Err(Error::ModeMatchingAmbiguous { re: b.re, im: b.im });
        }
        used[j] = true;
        out.push(moved[j]);
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExactSweep {
    /// `None` where the sample could not be evaluated.
    pub values: Vec<Option<f64>>,
    pub failures: usize,
}

impl ExactSweep {
    pub fn successes(&self) -> Vec<f64> {
        self.values.iter().flatten().copied().collect()
    }
}

/// Full power flow → linearization → eigendecomposition → total action for
/// every wind sample, kept in sample order.
pub fn exact_per_sample_action(
    case: &NetworkCase,
    bus: BusId,
    gain: f64,
    speeds: &[(usize, f64)],
    samples: &[f64],
) -> ExactSweep {
    let values: Vec<Option<f64>> = samples
        .par_iter()
        .map(|&p| {
            let eq = solve_power_flow(case, p).ok()?;
            let model = build_system_matrix(case, &eq, Some(bus), gain).ok()?;
            let dec = decompose(&model).ok()?;
            let z0 = transform_disturbance(&dec, &model.speed_disturbance(speeds).ok()?).ok()?;
            total_action(&dec, &z0).ok()
        })
        .collect();
    let failures = values.iter().filter(|v| v.is_none()).count();
    ExactSweep { values, failures }
}
