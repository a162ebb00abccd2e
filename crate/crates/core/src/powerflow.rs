//! Newton-Raphson AC power flow in polar coordinates.
//!
//! The wind plant is a constant active-power injection (unity power
//! factor) at `case.wind_bus`; the slack generator absorbs whatever
//! balance remains.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::case::{BusKind, NetworkCase};
use crate::error::{Error, Result};
use crate::network::{admittance_matrix, check_topology};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PowerFlowOptions {
    /// Convergence threshold on the mismatch infinity norm, p.u.
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for PowerFlowOptions {
    fn default() -> Self {
        PowerFlowOptions {
            tolerance: 1e-8,
            max_iterations: 50,
        }
    }
}

/// Solved operating point. Bus vectors follow case bus order; generator
/// vectors follow case generator order.
#[derive(Clone, Debug, PartialEq)]
pub struct EquilibriumState {
    pub voltage: Vec<f64>,
    pub angle: Vec<f64>,
    /// False for bare buses outside the slack island.
    pub energized: Vec<bool>,
    pub gen_p: Vec<f64>,
    pub gen_q: Vec<f64>,
    /// Magnitude of the EMF behind transient reactance.
    pub internal_emf: Vec<f64>,
    /// Rotor angle (angle of the internal EMF), rad.
    pub rotor_angle: Vec<f64>,
    pub wind_power: f64,
    pub mismatch: f64,
    pub iterations: usize,
}

impl EquilibriumState {
    pub fn voltage_phasor(&self, i: usize) -> Complex64 {
        Complex64::from_polar(self.voltage[i], self.angle[i])
    }
}

pub fn solve_power_flow(case: &NetworkCase, p_w: f64) -> Result<EquilibriumState> {
    solve_power_flow_with(case, p_w, &PowerFlowOptions::default())
}

pub fn solve_power_flow_with(
    case: &NetworkCase,
    p_w: f64,
    opts: &PowerFlowOptions,
) -> Result<EquilibriumState> {
    if !(p_w >= 0.0) || !p_w.is_finite() {
        return Err(Error::Validation(format!("wind power must be finite and >= 0, got {p_w}")));
    }
    solve_unchecked(case, p_w, opts)
}

/// Power flow for perturbed injections, including slightly negative ones
/// needed by central differences around `P_w = 0`.
pub(crate) fn solve_perturbed(case: &NetworkCase, p_w: f64) -> Result<EquilibriumState> {
    if !p_w.is_finite() {
        return Err(Error::Validation(format!("wind power must be finite, got {p_w}")));
    }
    solve_unchecked(case, p_w, &PowerFlowOptions::default())
}

fn solve_unchecked(
    case: &NetworkCase,
    p_w: f64,
    opts: &PowerFlowOptions,
) -> Result<EquilibriumState> {
    let energized = check_topology(case, p_w)?;
    let ybus = admittance_matrix(case);
    let nb = case.buses.len();

    let mut p_spec = vec![0.0; nb];
    let mut q_spec = vec![0.0; nb];
    for (i, bus) in case.buses.iter().enumerate() {
        p_spec[i] -= bus.pd;
        q_spec[i] -= bus.qd;
        if bus.kind == BusKind::Pv {
            p_spec[i] += case.generator_at(bus.id).map_or(0.0, |g| g.p);
        }
        if bus.id == case.wind_bus {
            p_spec[i] += p_w;
        }
    }

    let angle_idx: Vec<usize> = (0..nb)
        .filter(|&i| energized[i] && case.buses[i].kind != BusKind::Slack)
        .collect();
    let mag_idx: Vec<usize> = (0..nb)
        .filter(|&i| energized[i] && case.buses[i].kind == BusKind::Pq)
        .collect();
    let (na, nm) = (angle_idx.len(), mag_idx.len());

    // flat start
    let mut vm: Vec<f64> = case
        .buses
        .iter()
        .map(|b| if b.kind == BusKind::Pq { 1.0 } else { b.v })
        .collect();
    let mut va = vec![0.0; nb];

    let mut iterations = 0;
    loop {
        let v = DVector::from_iterator(nb, (0..nb).map(|i| Complex64::from_polar(vm[i], va[i])));
        let current = &ybus * &v;
        let s: Vec<Complex64> = (0..nb).map(|i| v[i] * current[i].conj()).collect();

        let mut f = DVector::<f64>::zeros(na + nm);
        for (r, &i) in angle_idx.iter().enumerate() {
            f[r] = p_spec[i] - s[i].re;
        }
        for (r, &i) in mag_idx.iter().enumerate() {
            f[na + r] = q_spec[i] - s[i].im;
        }
        let mismatch = f.amax();
        if !mismatch.is_finite() {
            return Err(Error::NonConvergence {
                iterations,
                mismatch,
            });
        }
        if mismatch <= opts.tolerance {
            return Ok(finish(case, &ybus, &vm, &va, energized, p_w, mismatch, iterations));
        }
        if iterations >= opts.max_iterations {
            return Err(Error::NonConvergence {
                iterations,
                mismatch,
            });
        }
        iterations += 1;

        let (ds_dva, ds_dvm) = power_derivatives(&ybus, &v, &current);
        let mut jac = DMatrix::<f64>::zeros(na + nm, na + nm);
        for (r, &i) in angle_idx.iter().enumerate() {
            for (c, &k) in angle_idx.iter().enumerate() {
                jac[(r, c)] = ds_dva[(i, k)].re;
            }
            for (c, &k) in mag_idx.iter().enumerate() {
                jac[(r, na + c)] = ds_dvm[(i, k)].re;
            }
        }
        for (r, &i) in mag_idx.iter().enumerate() {
            for (c, &k) in angle_idx.iter().enumerate() {
                jac[(na + r, c)] = ds_dva[(i, k)].im;
            }
            for (c, &k) in mag_idx.iter().enumerate() {
                jac[(na + r, na + c)] = ds_dvm[(i, k)].im;
            }
        }
        let Some(dx) = jac.lu().solve(&f) else {
            return Err(Error::NonConvergence {
                iterations,
                mismatch,
            });
        };
        for (r, &i) in angle_idx.iter().enumerate() {
            va[i] += dx[r];
        }
        for (r, &i) in mag_idx.iter().enumerate() {
            vm[i] += dx[na + r];
        }
    }
}

/// Partial derivatives of complex bus injections with respect to voltage
/// angles and magnitudes.
fn power_derivatives(
    ybus: &DMatrix<Complex64>,
    v: &DVector<Complex64>,
    current: &DVector<Complex64>,
) -> (DMatrix<Complex64>, DMatrix<Complex64>) {
    let n = v.len();
    let j = Complex64::new(0.0, 1.0);
    let mut ds_dva = DMatrix::<Complex64>::zeros(n, n);
    let mut ds_dvm = DMatrix::<Complex64>::zeros(n, n);
    for i in 0..n {
        for k in 0..n {
            let vk_unit = v[k] / v[k].norm();
            let diag = if i == k { current[i] } else { Complex64::new(0.0, 0.0) };
            ds_dva[(i, k)] = j * v[i] * (diag - ybus[(i, k)] * v[k]).conj();
            let mut dm = v[i] * (ybus[(i, k)] * vk_unit).conj();
            if i == k {
                dm += current[i].conj() * vk_unit;
            }
            ds_dvm[(i, k)] = dm;
        }
    }
    (ds_dva, ds_dvm)
}

#[allow(clippy::too_many_arguments)]
fn finish(
    case: &NetworkCase,
    ybus: &DMatrix<Complex64>,
    vm: &[f64],
    va: &[f64],
    energized: Vec<bool>,
    p_w: f64,
    mismatch: f64,
    iterations: usize,
) -> EquilibriumState {
    let nb = case.buses.len();
    let v = DVector::from_iterator(nb, (0..nb).map(|i| Complex64::from_polar(vm[i], va[i])));
    let current = ybus * &v;

    let mut gen_p = Vec::with_capacity(case.generators.len());
    let mut gen_q = Vec::with_capacity(case.generators.len());
    let mut internal_emf = Vec::with_capacity(case.generators.len());
    let mut rotor_angle = Vec::with_capacity(case.generators.len());
    for g in &case.generators {
        let i = case.bus_index(g.bus).unwrap();
        let bus = &case.buses[i];
        let mut s_gen = v[i] * current[i].conj() + Complex64::new(bus.pd, bus.qd);
        if bus.id == case.wind_bus {
            s_gen -= p_w;
        }
        let i_gen = (s_gen / v[i]).conj();
        let emf = v[i] + Complex64::new(0.0, g.xd) * i_gen;
        gen_p.push(s_gen.re);
        gen_q.push(s_gen.im);
        internal_emf.push(emf.norm());
        rotor_angle.push(emf.arg());
    }

    EquilibriumState {
        voltage: vm.to_vec(),
        angle: va.to_vec(),
        energized,
        gen_p,
        gen_q,
        internal_emf,
        rotor_angle,
        wind_power: p_w,
        mismatch,
        iterations,
    }
}
