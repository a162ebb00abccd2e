//! Eigendecomposition of the state matrix and the transformed inertia
//! matrix used by the energy formulas.
//!
//! Eigenvalues come from a complex Schur form `A = Q T Q*`; eigenvectors are
//! obtained by back-substitution on the triangular factor and mapped back
//! through `Q`. Left eigenvectors are the rows of `M⁻¹`, so `L·M = I` holds
//! to solver precision with no separate normalization step.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector, Schur, SVD};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::system::SystemModel;

/// Largest accepted condition number of the eigenvector matrix.
pub const MAX_CONDITION: f64 = 1e10;

/// Frequency band (Hz) of electromechanical modes.
pub const ELECTROMECHANICAL_BAND: (f64, f64) = (0.1, 3.0);

#[derive(Clone, Debug)]
pub struct ModalDecomposition {
    /// Sorted by real part, then imaginary part.
    pub eigenvalues: Vec<Complex64>,
    /// Right eigenvectors as columns (`M`).
    pub right: DMatrix<Complex64>,
    /// Left eigenvectors as rows (`L = M⁻¹`).
    pub left: DMatrix<Complex64>,
    /// `G = MᵀJM` (plain transpose).
    pub transformed_inertia: DMatrix<Complex64>,
    /// max Re λ
    pub stability_margin: f64,
    pub condition: f64,
}

impl ModalDecomposition {
    pub fn n(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn modes(&self) -> Vec<ModeInfo> {
        self.eigenvalues
            .iter()
            .enumerate()
            .map(|(index, &eigenvalue)| ModeInfo::new(index, eigenvalue))
            .collect()
    }

    /// Electromechanical modes, one per conjugate pair (positive imaginary part).
    pub fn electromechanical_modes(&self) -> Vec<ModeInfo> {
        self.modes()
            .into_iter()
            .filter(|m| m.eigenvalue.im > 0.0 && m.is_electromechanical())
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ModeInfo {
    pub index: usize,
    pub eigenvalue: Complex64,
    pub frequency_hz: f64,
    pub damping_ratio: f64,
}

impl ModeInfo {
    pub fn new(index: usize, eigenvalue: Complex64) -> ModeInfo {
        ModeInfo {
            index,
            eigenvalue,
            frequency_hz: frequency_hz(eigenvalue),
            damping_ratio: damping_ratio(eigenvalue),
        }
    }

    pub fn is_electromechanical(&self) -> bool {
        let (lo, hi) = ELECTROMECHANICAL_BAND;
        self.eigenvalue.im != 0.0 && self.frequency_hz >= lo && self.frequency_hz <= hi
    }
}

pub fn damping_ratio(lambda: Complex64) -> f64 {
    let mag = lambda.norm();
    if mag == 0.0 {
        0.0
    } else {
        -lambda.re / mag
    }
}

pub fn frequency_hz(lambda: Complex64) -> f64 {
    lambda.im.abs() / (2.0 * PI)
}

pub fn decompose(model: &SystemModel) -> Result<ModalDecomposition> {
    let (eigenvalues, right) = eigen(&model.a)?;
    let n = eigenvalues.len();

    let sv = SVD::new(right.clone(), false, false).singular_values;
    let (smax, smin) = (sv.max(), sv.min());
    let condition = if smin > 0.0 { smax / smin } else { f64::INFINITY };
    if !(condition <= MAX_CONDITION) {
        return Err(Error::DefectiveMatrix { condition });
    }
    let left = right
        .clone()
        .try_inverse()
        .ok_or(Error::DefectiveMatrix { condition: f64::INFINITY })?;

    let j = model.inertia.map(|x| Complex64::new(x, 0.0));
    let transformed_inertia = right.transpose() * j * &right;
    let stability_margin = eigenvalues
        .iter()
        .map(|l| l.re)
        .fold(f64::NEG_INFINITY, f64::max);
    debug_assert_eq!(transformed_inertia.nrows(), n);

    Ok(ModalDecomposition {
        eigenvalues,
        right,
        left,
        transformed_inertia,
        stability_margin,
        condition,
    })
}

/// `z₀ = L·Δx₀`.
pub fn transform_disturbance(dec: &ModalDecomposition, dx0: &DVector<f64>) -> Result<DVector<Complex64>> {
    if dx0.len() != dec.n() {
        return Err(Error::DimensionMismatch {
            expected: dec.n(),
            found: dx0.len(),
        });
    }
    Ok(&dec.left * dx0.map(|x| Complex64::new(x, 0.0)))
}

/// Eigenvalues and unit-norm right eigenvectors of a real matrix, sorted,
/// with conjugate pairs made exactly conjugate.
fn eigen(a: &DMatrix<f64>) -> Result<(Vec<Complex64>, DMatrix<Complex64>)> {
    let n = a.nrows();
    if a.iter().any(|x| !x.is_finite()) {
        return Err(Error::Validation("state matrix has non-finite entries".into()));
    }
    let ac = a.map(|x| Complex64::new(x, 0.0));
    let (q, t) = Schur::new(ac).unpack();

    let small = f64::EPSILON * t.norm().max(f64::MIN_POSITIVE);
    let mut values = Vec::with_capacity(n);
    let mut vectors = Vec::with_capacity(n);
    for k in 0..n {
        let lk = t[(k, k)];
        let mut y = DVector::<Complex64>::zeros(n);
        y[k] = Complex64::new(1.0, 0.0);
        for j in (0..k).rev() {
            let mut s = Complex64::new(0.0, 0.0);
            for l in j + 1..=k {
                s += t[(j, l)] * y[l];
            }
            let mut denom = t[(j, j)] - lk;
            if denom.norm() < small {
                denom = Complex64::new(small, 0.0);
            }
            y[j] = -s / denom;
        }
        values.push(lk);
        vectors.push(normalize(&q * y));
    }

    // exact conjugate symmetry for a real matrix
    let tol = 1e-10 * a.amax().max(1.0);
    let mut paired = vec![false; n];
    for i in 0..n {
        if paired[i] {
            continue;
        }
        if values[i].im.abs() <= tol {
            values[i].im = 0.0;
            vectors[i] = normalize(vectors[i].map(|c| Complex64::new(c.re, 0.0)));
            paired[i] = true;
            continue;
        }
        if values[i].im < 0.0 {
            continue;
        }
        let target = values[i].conj();
        let partner = (0..n)
            .filter(|&j| !paired[j] && j != i && values[j].im < 0.0)
            .min_by(|&x, &y| {
                (values[x] - target)
                    .norm()
                    .total_cmp(&(values[y] - target).norm())
            });
        if let Some(j) = partner {
            values[j] = target;
            vectors[j] = vectors[i].map(|c| c.conj());
            paired[i] = true;
            paired[j] = true;
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| {
        values[x]
            .re
            .total_cmp(&values[y].re)
            .then(values[x].im.total_cmp(&values[y].im))
    });
    let sorted_values = order.iter().map(|&i| values[i]).collect();
    let m = DMatrix::from_fn(n, n, |r, c| vectors[order[c]][r]);
    Ok((sorted_values, m))
}

/// Unit 2-norm with the first significant component positive real.
fn normalize(v: DVector<Complex64>) -> DVector<Complex64> {
    let norm = v.norm();
    if norm == 0.0 {
        return v;
    }
    let thresh = 1e-10 * v.iter().map(|c| c.norm()).fold(0.0, f64::max);
    let lead = v.iter().find(|c| c.norm() > thresh).copied().unwrap();
    let phase = lead / lead.norm();
    v.map(|c| c / phase / norm)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::bundled;
    use crate::powerflow::solve_power_flow;
    use crate::system::build_system_matrix;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn inf_norm(m: &DMatrix<Complex64>) -> f64 {
        m.row_iter()
            .map(|r| r.iter().map(|x| x.norm()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    fn model(a: DMatrix<f64>) -> SystemModel {
        let n = a.nrows();
        SystemModel::from_matrices(a, DMatrix::identity(n, n)).unwrap()
    }

    #[test]
    fn diagonal_matrix() {
        let m = model(DMatrix::from_diagonal(&DVector::from_vec(vec![-1.0, -2.0])));
        let dec = decompose(&m).unwrap();
        assert_eq!(dec.eigenvalues, vec![c(-2.0, 0.0), c(-1.0, 0.0)]);
        // ordering permutes the identity; G equals J up to the same permutation
        for (i, col) in dec.right.column_iter().enumerate() {
            assert!((col.norm() - 1.0).abs() < 1e-14);
            assert!((col[1 - i] - c(1.0, 0.0)).norm() < 1e-14);
        }
        assert!((dec.transformed_inertia.clone() - DMatrix::identity(2, 2).map(|x: f64| c(x, 0.0))).norm() < 1e-14);
    }

    #[test]
    fn jordan_block_is_defective() {
        let m = model(DMatrix::from_row_slice(2, 2, &[-1.0, 1.0, 0.0, -1.0]));
        assert!(matches!(decompose(&m), Err(Error::DefectiveMatrix { .. })));
    }

    #[test]
    fn residuals_on_bundled_cases() {
        for name in bundled::NAMES {
            let case = bundled::case(name).unwrap();
            let eq = solve_power_flow(&case, 0.0).unwrap();
            let sys = build_system_matrix(&case, &eq, Some(case.candidate_buses[0]), 5.0).unwrap();
            let dec = decompose(&sys).unwrap();
            let a = sys.a.map(|x| c(x, 0.0));
            let lam = DMatrix::from_diagonal(&DVector::from_vec(dec.eigenvalues.clone()));
            let resid = inf_norm(&(&a * &dec.right - &dec.right * lam));
            let a_inf = inf_norm(&a);
            assert!(resid <= 1e-8 * a_inf, "{name}: {resid}");
            let n = dec.n();
            let lm = inf_norm(&(&dec.left * &dec.right - DMatrix::<Complex64>::identity(n, n)));
            assert!(lm <= 1e-8, "{name}: {lm}");
            let g = &dec.transformed_inertia;
            let asym = (g - g.transpose()).norm();
            assert!(asym <= 1e-10 * g.norm(), "{name}: {asym}");
            // conjugate pairs
            for l in &dec.eigenvalues {
                assert!(dec.eigenvalues.iter().any(|o| (o - l.conj()).norm() < 1e-9));
            }
        }
    }

    #[test]
    fn transform_identity_and_zero() {
        let m = model(DMatrix::from_diagonal(&DVector::from_vec(vec![-3.0, -1.0, -2.0])));
        let dec = decompose(&m).unwrap();
        let z = transform_disturbance(&dec, &DVector::zeros(3)).unwrap();
        assert!(z.iter().all(|c| c.norm() == 0.0));
        assert!(matches!(
            transform_disturbance(&dec, &DVector::zeros(2)),
            Err(Error::DimensionMismatch { expected: 3, found: 2 })
        ));
    }

    #[test]
    fn mode_metrics() {
        let l = c(-0.5, 2.0 * PI);
        assert!((frequency_hz(l) - 1.0).abs() < 1e-12);
        assert!((damping_ratio(l) - 0.5 / l.norm()).abs() < 1e-12);
        assert!(ModeInfo::new(0, l).is_electromechanical());
        assert!(!ModeInfo::new(0, c(-1.0, 0.0)).is_electromechanical());
        assert!(!ModeInfo::new(0, c(-1.0, 40.0)).is_electromechanical());
    }
}
