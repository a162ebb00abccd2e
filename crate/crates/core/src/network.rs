//! Bus admittance matrix assembly, topology checks and Kron reduction.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::case::NetworkCase;
use crate::error::{Error, Result};

const KRON_PIVOT_MIN: f64 = 1e-12;

/// Bus admittance matrix in case bus order, including line charging and
/// bus shunts. Open branches (non-finite impedance) are skipped.
pub fn admittance_matrix(case: &NetworkCase) -> DMatrix<Complex64> {
    let nb = case.buses.len();
    let mut y = DMatrix::<Complex64>::zeros(nb, nb);
    for br in case.branches.iter().filter(|b| b.in_service()) {
        let f = case.bus_index(br.from).unwrap();
        let t = case.bus_index(br.to).unwrap();
        let ys = Complex64::new(br.r, br.x).inv();
        let ysh = Complex64::new(0.0, br.b / 2.0);
        y[(f, f)] += ys + ysh;
        y[(t, t)] += ys + ysh;
        y[(f, t)] -= ys;
        y[(t, f)] -= ys;
    }
    for (i, bus) in case.buses.iter().enumerate() {
        y[(i, i)] += Complex64::new(bus.gs, bus.bs);
    }
    y
}

/// Marks buses reachable from the slack through in-service branches.
pub fn energized_buses(case: &NetworkCase) -> Vec<bool> {
    let nb = case.buses.len();
    let mut adj = vec![Vec::new(); nb];
    for br in case.branches.iter().filter(|b| b.in_service()) {
        let f = case.bus_index(br.from).unwrap();
        let t = case.bus_index(br.to).unwrap();
        adj[f].push(t);
        adj[t].push(f);
    }
    let mut seen = vec![false; nb];
    let mut stack = vec![case.slack_index()];
    seen[case.slack_index()] = true;
    while let Some(i) = stack.pop() {
        for &j in &adj[i] {
            if !seen[j] {
                seen[j] = true;
                stack.push(j);
            }
        }
    }
    seen
}

/// Checks that every bus carrying load, shunt, generation or wind
/// injection is connected to the slack. Returns the energized mask; bare
/// buses outside the slack island are tolerated and left out of the
/// network equations.
pub fn check_topology(case: &NetworkCase, p_w: f64) -> Result<Vec<bool>> {
    let energized = energized_buses(case);
    for (i, bus) in case.buses.iter().enumerate() {
        if energized[i] {
            continue;
        }
        let wind_here = bus.id == case.wind_bus && p_w != 0.0;
        let active = bus.pd != 0.0
            || bus.qd != 0.0
            || bus.gs != 0.0
            || bus.bs != 0.0
            || case.generator_at(bus.id).is_some()
            || wind_here;
        if active {
            return Err(Error::IslandedNetwork(format!(
                "bus {} is not connected to the slack bus",
                bus.id
            )));
        }
    }
    Ok(energized)
}

/// Eliminates every node after the first `keep` by Gaussian elimination,
/// returning the `keep × keep` equivalent admittance matrix.
pub fn kron_reduce(y: &DMatrix<Complex64>, keep: usize) -> Result<DMatrix<Complex64>> {
    let n = y.nrows();
    assert!(keep <= n && y.is_square());
    let mut w = y.clone();
    for p in (keep..n).rev() {
        let pivot = w[(p, p)];
        if pivot.norm() < KRON_PIVOT_MIN {
            return Err(Error::SingularReduction {
                node: p,
                pivot: pivot.norm(),
            });
        }
        for i in 0..p {
            let f = w[(i, p)] / pivot;
            if f == Complex64::new(0.0, 0.0) {
                continue;
            }
            for j in 0..p {
                let wpj = w[(p, j)];
                w[(i, j)] -= f * wpj;
            }
        }
    }
    Ok(w.view((0, 0), (keep, keep)).into_owned())
}
