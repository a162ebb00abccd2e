//! Oscillation energy, action and total action in modal coordinates, and
//! the first-order total-action estimator in the wind injection.
//!
//! With `z(t) = e^{Λt} z₀` the kinetic-energy deviation is
//! `E(t) = ½ Σ_ij z₀ᵢ z₀ⱼ gᵢⱼ e^{(λᵢ+λⱼ)t}`, so its time integral has a
//! closed form in the eigenvalues. The sensitivity `βᵢ = ∂S_∞/∂λᵢ`
//! combined with eigenvalue sensitivities `∂λᵢ/∂P_w` gives the slope
//! `γ` of the total action with respect to the wind injection.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::case::{BusId, NetworkCase};
use crate::error::{Error, Result};
use crate::modal::ModalDecomposition;
use crate::network::energized_buses;
use crate::powerflow::solve_perturbed;
use crate::system::{build_system_matrix, SystemModel};

/// Total action requires `max Re λ < -STABILITY_MARGIN`.
pub const STABILITY_MARGIN: f64 = 1e-6;
/// Closed forms are singular when `|λᵢ + λⱼ|` drops below this.
pub const RESONANCE_GUARD: f64 = 1e-9;
/// Allowed imaginary residue of real-valued results, relative.
pub const IMAG_RESIDUE: f64 = 1e-9;
/// Default central-difference step for `∂A/∂P_w`, p.u.
pub const DEFAULT_FD_STEP: f64 = 1e-3;

/// Linear total-action model for one actuator placement and disturbance.
#[derive(Clone, Debug)]
pub struct ActionEstimate {
    pub bus: BusId,
    /// `S_∞` at the base wind injection.
    pub base_total_action: f64,
    pub beta: DVector<Complex64>,
    pub sensitivity: DVector<Complex64>,
    pub gamma: f64,
    pub base_wind_power: f64,
}

impl ActionEstimate {
    /// `S_∞^{0k} + γ_k·ΔP_w`. Not clamped at zero.
    pub fn estimate(&self, delta_pw: f64) -> f64 {
        self.base_total_action + self.gamma * delta_pw
    }

    pub fn at_wind_power(&self, p_w: f64) -> f64 {
        self.estimate(p_w - self.base_wind_power)
    }
}

pub fn estimate_total_action(est: &ActionEstimate, delta_pw: f64) -> f64 {
    est.estimate(delta_pw)
}

/// `½ ΔxᵀJΔx`.
pub fn oscillation_energy(model: &SystemModel, dx: &DVector<f64>) -> Result<f64> {
    if dx.len() != model.n() {
        return Err(Error::DimensionMismatch {
            expected: model.n(),
            found: dx.len(),
        });
    }
    Ok(0.5 * dx.dot(&(&model.inertia * dx)))
}

fn check_len(dec: &ModalDecomposition, len: usize) -> Result<()> {
    if len != dec.n() {
        return Err(Error::DimensionMismatch {
            expected: dec.n(),
            found: len,
        });
    }
    Ok(())
}

fn pair_sum(lambda: &[Complex64], i: usize, j: usize) -> Result<Complex64> {
    let s = lambda[i] + lambda[j];
    if s.norm() <= RESONANCE_GUARD {
        return Err(Error::ResonantPair {
            i,
            j,
            magnitude: s.norm(),
        });
    }
    Ok(s)
}

fn real_part(sum: Complex64, scale: f64) -> Result<f64> {
    if sum.im.abs() > IMAG_RESIDUE * scale.max(sum.re.abs()) && sum.im.abs() > f64::MIN_POSITIVE {
        return Err(Error::ComplexResidue {
            residue: sum.im.abs() / scale.max(sum.re.abs()),
        });
    }
    Ok(sum.re)
}

/// Action over `[0, τ]`:
/// `½ Σ_ij (e^{(λᵢ+λⱼ)τ} − 1)/(λᵢ+λⱼ) · z₀ᵢ z₀ⱼ gᵢⱼ`.
pub fn action(dec: &ModalDecomposition, z0: &DVector<Complex64>, tau: f64) -> Result<f64> {
    check_len(dec, z0.len())?;
    if !(tau >= 0.0) {
        return Err(Error::Validation(format!("tau must be >= 0, got {tau}")));
    }
    let n = dec.n();
    let g = &dec.transformed_inertia;
    let lam = &dec.eigenvalues;
    let mut sum = Complex64::new(0.0, 0.0);
    let mut scale = 0.0;
    for i in 0..n {
        for j in 0..n {
            let s = pair_sum(lam, i, j)?;
            let term = 0.5 * ((s * tau).exp() - 1.0) / s * z0[i] * z0[j] * g[(i, j)];
            scale += term.norm();
            sum += term;
        }
    }
    real_part(sum, scale)
}

/// `S_∞ = −½ Σ_ij z₀ᵢ z₀ⱼ gᵢⱼ / (λᵢ+λⱼ)`.
pub fn total_action(dec: &ModalDecomposition, z0: &DVector<Complex64>) -> Result<f64> {
    check_len(dec, z0.len())?;
    if dec.stability_margin >= -STABILITY_MARGIN {
        return Err(Error::UnstableSystem {
            max_real: dec.stability_margin,
        });
    }
    let (sum, scale) = total_action_sum(&dec.eigenvalues, z0, &dec.transformed_inertia)?;
    real_part(sum, scale)
}

/// Complex double sum behind [`total_action`] for explicitly supplied
/// eigenvalues; also returns the sum of term magnitudes.
pub fn total_action_sum(
    lambda: &[Complex64],
    z0: &DVector<Complex64>,
    g: &DMatrix<Complex64>,
) -> Result<(Complex64, f64)> {
    let n = lambda.len();
    let mut sum = Complex64::new(0.0, 0.0);
    let mut scale = 0.0;
    for i in 0..n {
        for j in 0..n {
            let s = pair_sum(lambda, i, j)?;
            let term = -0.5 * z0[i] * z0[j] * g[(i, j)] / s;
            scale += term.norm();
            sum += term;
        }
    }
    Ok((sum, scale))
}

/// `βᵢ = Σ_j z₀ᵢ z₀ⱼ gᵢⱼ / (λᵢ+λⱼ)²`.
pub fn beta_coefficients(dec: &ModalDecomposition, z0: &DVector<Complex64>) -> Result<DVector<Complex64>> {
    check_len(dec, z0.len())?;
    if dec.stability_margin >= -STABILITY_MARGIN {
        return Err(Error::UnstableSystem {
            max_real: dec.stability_margin,
        });
    }
    let n = dec.n();
    let g = &dec.transformed_inertia;
    let mut beta = DVector::zeros(n);
    for i in 0..n {
        for j in 0..n {
            let s = pair_sum(&dec.eigenvalues, i, j)?;
            beta[i] += z0[i] * z0[j] * g[(i, j)] / (s * s);
        }
    }
    Ok(beta)
}

/// `∂λᵢ/∂P_w = lᵢᵀ (∂A/∂P_w) vᵢ`.
pub fn eigen_sensitivity(dec: &ModalDecomposition, da: &DMatrix<f64>) -> Result<DVector<Complex64>> {
    let n = dec.n();
    if da.shape() != (n, n) {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: da.nrows(),
        });
    }
    let dac = da.map(|x| Complex64::new(x, 0.0));
    let prod = &dec.left * dac * &dec.right;
    Ok(DVector::from_iterator(n, (0..n).map(|i| prod[(i, i)])))
}

/// `γ = Re Σ βᵢ ∂λᵢ/∂P_w`.
pub fn gamma(beta: &DVector<Complex64>, sensitivity: &DVector<Complex64>) -> Result<f64> {
    if beta.len() != sensitivity.len() {
        return Err(Error::DimensionMismatch {
            expected: beta.len(),
            found: sensitivity.len(),
        });
    }
    let mut sum = Complex64::new(0.0, 0.0);
    let mut scale = 0.0;
    for (b, d) in beta.iter().zip(sensitivity.iter()) {
        let t = b * d;
        scale += t.norm();
        sum += t;
    }
    real_part(sum, scale)
}

/// Central difference `(A(P_w+h) − A(P_w−h)) / 2h`, each side on its own
/// re-solved equilibrium. A wind bus outside the slack island cannot move
/// the operating point and yields the zero matrix.
pub fn fd_system_matrix(
    case: &NetworkCase,
    p_w: f64,
    placement: Option<BusId>,
    gain: f64,
    h: f64,
) -> Result<DMatrix<f64>> {
    if !(h > 0.0) {
        return Err(Error::Validation(format!("finite-difference step must be positive, got {h}")));
    }
    let n = 2 * case.generators.len() - 1;
    let wind = case.bus_index(case.wind_bus).unwrap();
    if !energized_buses(case)[wind] {
        return Ok(DMatrix::zeros(n, n));
    }
    let a_hi = build_system_matrix(case, &solve_perturbed(case, p_w + h)?, placement, gain)?.a;
    let a_lo = build_system_matrix(case, &solve_perturbed(case, p_w - h)?, placement, gain)?.a;
    Ok((a_hi - a_lo) / (2.0 * h))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::modal::decompose;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn scalar() -> ModalDecomposition {
        let m = SystemModel::from_matrices(DMatrix::from_element(1, 1, -1.0), DMatrix::from_element(1, 1, 1.0)).unwrap();
        decompose(&m).unwrap()
    }

    #[test]
    fn energy_formula() {
        let m = SystemModel::from_matrices(
            DMatrix::from_diagonal(&DVector::from_vec(vec![-1.0, -1.0])),
            DMatrix::from_diagonal(&DVector::from_vec(vec![0.0, 10.0])),
        )
        .unwrap();
        assert_eq!(oscillation_energy(&m, &DVector::zeros(2)).unwrap(), 0.0);
        let e = oscillation_energy(&m, &DVector::from_vec(vec![0.0, 0.01])).unwrap();
        assert!((e - 5e-4).abs() < 1e-18);
        assert_eq!(oscillation_energy(&m, &DVector::from_vec(vec![0.3, 0.0])).unwrap(), 0.0);
        assert!(oscillation_energy(&m, &DVector::zeros(3)).is_err());
    }

    #[test]
    fn scalar_closed_forms() {
        let dec = scalar();
        let z0 = DVector::from_vec(vec![c(1.0, 0.0)]);
        assert!((total_action(&dec, &z0).unwrap() - 0.25).abs() < 1e-15);
        assert_eq!(action(&dec, &z0, 0.0).unwrap(), 0.0);
        assert!((action(&dec, &z0, 40.0).unwrap() - 0.25).abs() < 1e-15);
        let b = beta_coefficients(&dec, &z0).unwrap();
        assert!((b[0] - c(0.25, 0.0)).norm() < 1e-15);
        let zero = DVector::from_vec(vec![c(0.0, 0.0)]);
        assert_eq!(total_action(&dec, &zero).unwrap(), 0.0);
        assert_eq!(beta_coefficients(&dec, &zero).unwrap()[0], c(0.0, 0.0));
    }

    #[test]
    fn unstable_and_resonant() {
        let m = SystemModel::from_matrices(DMatrix::from_element(1, 1, 0.5), DMatrix::from_element(1, 1, 1.0)).unwrap();
        let dec = decompose(&m).unwrap();
        let z0 = DVector::from_vec(vec![c(1.0, 0.0)]);
        assert!(matches!(total_action(&dec, &z0), Err(Error::UnstableSystem { .. })));

        let m = SystemModel::from_matrices(
            DMatrix::from_diagonal(&DVector::from_vec(vec![-1.0, 1.0])),
            DMatrix::identity(2, 2),
        )
        .unwrap();
        let dec = decompose(&m).unwrap();
        let z0 = DVector::from_vec(vec![c(1.0, 0.0), c(1.0, 0.0)]);
        assert!(matches!(action(&dec, &z0, 1.0), Err(Error::ResonantPair { .. })));
    }

    #[test]
    fn sensitivity_identities() {
        let a = DMatrix::from_row_slice(3, 3, &[0.0, 1.0, 0.0, -4.0, -0.2, 1.0, 0.0, 0.5, -3.0]);
        let m = SystemModel::from_matrices(a, DMatrix::identity(3, 3)).unwrap();
        let dec = decompose(&m).unwrap();
        let zero = eigen_sensitivity(&dec, &DMatrix::zeros(3, 3)).unwrap();
        assert!(zero.iter().all(|x| x.norm() == 0.0));
        let ones = eigen_sensitivity(&dec, &DMatrix::identity(3, 3)).unwrap();
        assert!(ones.iter().all(|x| (x - c(1.0, 0.0)).norm() < 1e-12));
        assert!(eigen_sensitivity(&dec, &DMatrix::zeros(2, 2)).is_err());
    }

    #[test]
    fn gamma_cases() {
        let beta = DVector::from_vec(vec![c(0.0, 0.0); 3]);
        let dl = DVector::from_vec(vec![c(1.0, 2.0), c(1.0, -2.0), c(-3.0, 0.0)]);
        assert_eq!(gamma(&beta, &dl).unwrap(), 0.0);
        let beta = DVector::from_vec(vec![c(0.3, -0.7), c(0.3, 0.7), c(2.0, 0.0)]);
        let g = gamma(&beta, &dl).unwrap();
        let expect = 2.0 * (c(0.3, -0.7) * c(1.0, 2.0)).re - 6.0;
        assert!((g - expect).abs() < 1e-14);
        let skew = DVector::from_vec(vec![c(0.0, 1.0), c(0.0, 0.0), c(0.0, 0.0)]);
        assert!(matches!(gamma(&skew, &dl), Err(Error::ComplexResidue { .. })));
        assert!(gamma(&beta, &DVector::zeros(2)).is_err());
    }

    #[test]
    fn estimator_arithmetic() {
        let est = ActionEstimate {
            bus: 1,
            base_total_action: 1.0,
            beta: DVector::zeros(0),
            sensitivity: DVector::zeros(0),
            gamma: -0.2,
            base_wind_power: 0.0,
        };
        assert_eq!(estimate_total_action(&est, 0.0), 1.0);
        assert!((estimate_total_action(&est, 1.0) - 0.8).abs() < 1e-15);
    }
}
