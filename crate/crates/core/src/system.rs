//! Linearized classical multi-machine dynamics.
//!
//! Each machine is a constant EMF behind transient reactance:
//!
//! ```text
//! dδ_i/dt  = ω_s Δω_i
//! 2H_i dΔω_i/dt = P_m,i − P_e,i − D_i Δω_i  [− K_d Δω_i at the actuator bus]
//! ```
//!
//! Loads and the wind plant become constant admittances at their
//! equilibrium voltage so the network Kron-reduces exactly to the internal
//! machine nodes. Angles are taken relative to the first declared
//! generator, which removes the zero eigenvalue of the angle reference:
//! the state vector is `[δ_2−δ_1, …, δ_p−δ_1, Δω_1, …, Δω_p]`.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::case::{BusId, NetworkCase};
use crate::error::{Error, Result};
use crate::network::{admittance_matrix, kron_reduce};
use crate::powerflow::EquilibriumState;

/// Default frequency-feedback gain of the damping actuator, p.u./p.u.
pub const DEFAULT_GAIN: f64 = 5.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StateKind {
    /// Rotor angle relative to the reference machine, rad.
    Angle,
    /// Speed deviation, p.u.
    Speed,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StateLabel {
    pub generator: usize,
    pub kind: StateKind,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Actuator {
    pub bus: BusId,
    pub gain: f64,
}

#[derive(Clone, Debug)]
pub struct SystemModel {
    pub a: DMatrix<f64>,
    pub labels: Vec<StateLabel>,
    /// Inertia matrix: 2H_j on the speed diagonal, zero elsewhere.
    pub inertia: DMatrix<f64>,
    pub actuator: Option<Actuator>,
    /// Wind injection of the equilibrium this model was linearized at.
    pub wind_power: f64,
}

impl SystemModel {
    /// Wraps an arbitrary state matrix; states with a positive inertia
    /// diagonal are labelled as speeds.
    pub fn from_matrices(a: DMatrix<f64>, inertia: DMatrix<f64>) -> Result<SystemModel> {
        let n = a.nrows();
        if !a.is_square() {
            return Err(Error::DimensionMismatch { expected: n, found: a.ncols() });
        }
        if inertia.shape() != (n, n) {
            return Err(Error::DimensionMismatch { expected: n, found: inertia.nrows() });
        }
        let labels = (0..n)
            .map(|i| StateLabel {
                generator: i,
                kind: if inertia[(i, i)] > 0.0 { StateKind::Speed } else { StateKind::Angle },
            })
            .collect();
        Ok(SystemModel {
            a,
            labels,
            inertia,
            actuator: None,
            wind_power: 0.0,
        })
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    pub fn speed_index(&self, generator: usize) -> Option<usize> {
        self.labels
            .iter()
            .position(|l| l.kind == StateKind::Speed && l.generator == generator)
    }

    /// State vector with the given generator speed deviations and all
    /// other states zero.
    pub fn speed_disturbance(&self, speeds: &[(usize, f64)]) -> Result<DVector<f64>> {
        let mut x = DVector::zeros(self.n());
        for &(g, dw) in speeds {
            let i = self.speed_index(g).ok_or_else(|| {
                Error::Validation(format!("disturbance references unknown generator {g}"))
            })?;
            x[i] += dw;
        }
        Ok(x)
    }
}

/// Network reduced to the generator internal nodes, in generator order.
pub fn reduced_admittance(case: &NetworkCase, eq: &EquilibriumState) -> Result<DMatrix<Complex64>> {
    let ng = case.generators.len();
    let live: Vec<usize> = (0..case.buses.len()).filter(|&i| eq.energized[i]).collect();
    let pos = |bus_index: usize| live.iter().position(|&i| i == bus_index).unwrap();
    let nb = live.len();

    let ybus = admittance_matrix(case);
    let mut y = DMatrix::<Complex64>::zeros(ng + nb, ng + nb);
    for (r, &i) in live.iter().enumerate() {
        for (c, &k) in live.iter().enumerate() {
            y[(ng + r, ng + c)] = ybus[(i, k)];
        }
        let bus = &case.buses[i];
        let v2 = eq.voltage[i] * eq.voltage[i];
        let mut load = Complex64::new(bus.pd, -bus.qd);
        if bus.id == case.wind_bus {
            load -= eq.wind_power;
        }
        y[(ng + r, ng + r)] += load / v2;
    }
    for (g, gen) in case.generators.iter().enumerate() {
        let b = ng + pos(case.bus_index(gen.bus).unwrap());
        let yg = Complex64::new(0.0, gen.xd).inv();
        y[(g, g)] += yg;
        y[(b, b)] += yg;
        y[(g, b)] -= yg;
        y[(b, g)] -= yg;
    }
    kron_reduce(&y, ng)
}

/// Synchronizing matrix `K[i][j] = ∂P_e,i/∂δ_j`; rows sum to zero.
pub fn synchronizing_matrix(case: &NetworkCase, eq: &EquilibriumState) -> Result<DMatrix<f64>> {
    let yred = reduced_admittance(case, eq)?;
    let ng = case.generators.len();
    let mut k = DMatrix::<f64>::zeros(ng, ng);
    for i in 0..ng {
        for j in 0..ng {
            if i == j {
                continue;
            }
            let dij = eq.rotor_angle[i] - eq.rotor_angle[j];
            let (g, b) = (yred[(i, j)].re, yred[(i, j)].im);
            k[(i, j)] = eq.internal_emf[i] * eq.internal_emf[j] * (g * dij.sin() - b * dij.cos());
        }
        let off: f64 = (0..ng).filter(|&j| j != i).map(|j| k[(i, j)]).sum();
        k[(i, i)] = -off;
    }
    Ok(k)
}

/// Electrical power output of each machine from the reduced network.
pub fn electrical_power(case: &NetworkCase, eq: &EquilibriumState) -> Result<Vec<f64>> {
    let yred = reduced_admittance(case, eq)?;
    let e = DVector::from_iterator(
        case.generators.len(),
        (0..case.generators.len()).map(|g| Complex64::from_polar(eq.internal_emf[g], eq.rotor_angle[g])),
    );
    let i = &yred * &e;
    Ok((0..e.len()).map(|g| (e[g] * i[g].conj()).re).collect())
}

pub fn build_system_matrix(
    case: &NetworkCase,
    eq: &EquilibriumState,
    placement: Option<BusId>,
    gain: f64,
) -> Result<SystemModel> {
    let actuator_gen = match placement {
        Some(bus) => {
            if !case.candidate_buses.contains(&bus) {
                return Err(Error::Validation(format!("bus {bus} is not a candidate bus")));
            }
            if !(gain.is_finite() && gain >= 0.0) {
                return Err(Error::Validation(format!("actuator gain must be >= 0, got {gain}")));
            }
            case.generators.iter().position(|g| g.bus == bus)
        }
        None => None,
    };

    let k = synchronizing_matrix(case, eq)?;
    let p = case.generators.len();
    let n = 2 * p - 1;
    let ws = case.omega_s();
    let speed = |g: usize| p - 1 + g;

    let mut a = DMatrix::<f64>::zeros(n, n);
    let mut inertia = DMatrix::<f64>::zeros(n, n);
    let mut labels = Vec::with_capacity(n);

    for j in 1..p {
        labels.push(StateLabel {
            generator: case.generators[j].id,
            kind: StateKind::Angle,
        });
        a[(j - 1, speed(j))] = ws;
        a[(j - 1, speed(0))] = -ws;
    }
    for (i, gen) in case.generators.iter().enumerate() {
        labels.push(StateLabel {
            generator: gen.id,
            kind: StateKind::Speed,
        });
        let m = 2.0 * gen.h;
        for j in 1..p {
            a[(speed(i), j - 1)] = -k[(i, j)] / m;
        }
        let extra = if actuator_gen == Some(i) { gain } else { 0.0 };
        a[(speed(i), speed(i))] = -(gen.d + extra) / m;
        inertia[(speed(i), speed(i))] = m;
    }

    if a.iter().any(|x| !x.is_finite()) {
        return Err(Error::Validation("state matrix has non-finite entries".into()));
    }

    Ok(SystemModel {
        a,
        labels,
        inertia,
        actuator: placement.map(|bus| Actuator { bus, gain }),
        wind_power: eq.wind_power,
    })
}
