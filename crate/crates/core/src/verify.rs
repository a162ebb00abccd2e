//! Oracle suite: each check pits a closed-form or linearized quantity
//! against its brute-force counterpart and records the measured error next
//! to the tolerance it must meet.

use std::fmt;
use std::time::Instant;

use nalgebra::DVector;

use crate::action::{action, eigen_sensitivity, fd_system_matrix, total_action, ActionEstimate, DEFAULT_FD_STEP};
use crate::case::{BusId, NetworkCase};
use crate::error::{Error, Result};
use crate::modal::{decompose, transform_disturbance};
use crate::oracle::{
    default_horizon, exact_per_sample_action, fd_mode_movement, modal_state, numeric_action,
    numeric_total_action, simulate_linear, DEFAULT_DT,
};
use crate::powerflow::solve_power_flow;
use crate::siting::{
    baseline_dominant_mode, chance_constrained_site, per_disturbance_probability, prepare_estimates,
    Disturbance, DisturbanceSet, Method, SitingOptions,
};
use crate::stats::{mean, std_dev, wasserstein1};
use crate::system::{build_system_matrix, SystemModel};
use crate::wind::{sample_wind_power, WindModel};

pub const ORACLE_TOL: f64 = 1e-3;
pub const LIMIT_TOL: f64 = 1e-6;
pub const SENSITIVITY_TOL: f64 = 1e-4;
pub const MEAN_TOL: f64 = 0.02;
pub const WASSERSTEIN_TOL: f64 = 0.05;
pub const SPEEDUP_MIN: f64 = 10.0;
pub const PROBABILITY_TOL: f64 = 1e-12;
pub const CROSSING_SIGMAS: f64 = 3.0;
pub const RECONSTRUCTION_TOL: f64 = 1e-6;
pub const GRID_TOL: f64 = 1e-5;
/// Benchmark damping ratio used by the divergence check.
pub const DIVERGENCE_BENCHMARK: f64 = 0.05;

#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub name: String,
    pub measured: f64,
    pub tolerance: f64,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    /// Passing when `measured <= tolerance`.
    fn at_most(name: &str, measured: f64, tolerance: f64, detail: String) -> Check {
        Check {
            name: name.to_string(),
            measured,
            tolerance,
            passed: measured <= tolerance,
            detail,
        }
    }

    /// Passing when `measured >= tolerance`.
    fn at_least(name: &str, measured: f64, tolerance: f64, detail: String) -> Check {
        Check {
            name: name.to_string(),
            measured,
            tolerance,
            passed: measured >= tolerance,
            detail,
        }
    }

    fn failed(name: &str, err: &Error) -> Check {
        Check {
            name: name.to_string(),
            measured: f64::NAN,
            tolerance: f64::NAN,
            passed: false,
            detail: format!("error[{}]: {err}", err.code()),
        }
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {:<24} measured={:.3e} tol={:.3e} {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.measured,
            self.tolerance,
            self.detail
        )
    }
}

#[derive(Clone, Debug, Default)]
pub struct Report {
    pub checks: Vec<Check>,
}

impl Report {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    fn push(&mut self, name: &str, check: Result<Check>) {
        self.checks.push(check.unwrap_or_else(|e| Check::failed(name, &e)));
    }
}

impl fmt::Display for Report {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            writeln!(f, "{c}")?;
        }
        let failed = self.checks.iter().filter(|c| !c.passed).count();
        write!(f, "{} checks, {} failed", self.checks.len(), failed)
    }
}

fn relative(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / b.abs().max(a.abs())
    }
}

fn placed_model(case: &NetworkCase, bus: BusId, gain: f64) -> Result<SystemModel> {
    let eq = solve_power_flow(case, case.wind.base_power)?;
    build_system_matrix(case, &eq, Some(bus), gain)
}

/// RK4 + trapezoid total action, lengthening the horizon until the tail
/// guard is satisfied.
pub fn simulated_total_action(model: &SystemModel, dx0: &DVector<f64>, dt: f64) -> Result<f64> {
    let mut horizon = default_horizon(model);
    for _ in 0..4 {
        let traj = simulate_linear(model, dx0, horizon, dt)?;
        match numeric_total_action(&traj, model) {
            Err(Error::TailNotDecayed { .. }) => horizon *= 1.5,
            other => return other,
        }
    }
    numeric_total_action(&simulate_linear(model, dx0, horizon, dt)?, model)
}

/// Closed-form `S_∞` against the simulated integral for every disturbance,
/// actuator at the first candidate.
pub fn action_oracle(case: &NetworkCase, disturbances: &DisturbanceSet, gain: f64, dt: f64) -> Result<Check> {
    let bus = case.candidate_buses[0];
    let model = placed_model(case, bus, gain)?;
    let dec = decompose(&model)?;
    let mut worst: f64 = 0.0;
    for d in disturbances.iter() {
        let dx0 = model.speed_disturbance(&d.speeds)?;
        let closed = total_action(&dec, &transform_disturbance(&dec, &dx0)?)?;
        let numeric = simulated_total_action(&model, &dx0, dt)?;
        worst = worst.max(relative(closed, numeric));
    }
    Ok(Check::at_most(
        "total-action-oracle",
        worst,
        ORACLE_TOL,
        format!("{}: {} disturbances, bus {bus}", case.name, disturbances.len()),
    ))
}

/// `S(τ)` against `S_∞` at `τ = 10/|max Re λ|`.
pub fn action_limit(case: &NetworkCase, disturbances: &DisturbanceSet, gain: f64) -> Result<Check> {
    let bus = case.candidate_buses[0];
    let model = placed_model(case, bus, gain)?;
    let dec = decompose(&model)?;
    let tau = 10.0 / dec.stability_margin.abs();
    let mut worst: f64 = 0.0;
    for d in disturbances.iter() {
        let z0 = transform_disturbance(&dec, &model.speed_disturbance(&d.speeds)?)?;
        worst = worst.max(relative(action(&dec, &z0, tau)?, total_action(&dec, &z0)?));
    }
    Ok(Check::at_most(
        "action-limit",
        worst,
        LIMIT_TOL,
        format!("{}: tau = {tau:.3} s", case.name),
    ))
}

/// Closed-form `S(τ)` against the trapezoid integral on `[0, τ]`.
pub fn partial_action(case: &NetworkCase, disturbances: &DisturbanceSet, gain: f64, dt: f64) -> Result<Check> {
    let bus = case.candidate_buses[0];
    let model = placed_model(case, bus, gain)?;
    let dec = decompose(&model)?;
    let mut worst: f64 = 0.0;
    for d in disturbances.iter() {
        let dx0 = model.speed_disturbance(&d.speeds)?;
        let z0 = transform_disturbance(&dec, &dx0)?;
        for tau in [1.0, 5.0, 20.0] {
            let closed = action(&dec, &z0, tau)?;
            let numeric = numeric_action(&simulate_linear(&model, &dx0, tau, dt)?, &model)?;
            worst = worst.max((closed - numeric).abs() / (1e-3 * closed.abs()).max(1e-6));
        }
    }
    Ok(Check::at_most(
        "partial-action",
        worst,
        1.0,
        format!("{}: error / max(1e-6, 1e-3 |S|), tau in {{1, 5, 20}} s", case.name),
    ))
}

/// RK4 trajectory against the modal solution, sampled once per second.
pub fn modal_reconstruction(case: &NetworkCase, disturbance: &Disturbance, gain: f64, dt: f64) -> Result<Check> {
    let model = placed_model(case, case.candidate_buses[0], gain)?;
    let dx0 = model.speed_disturbance(&disturbance.speeds)?;
    let t_end = 10.0;
    let traj = simulate_linear(&model, &dx0, t_end, dt)?;
    let stride = (1.0 / dt).round() as usize;
    let mut worst: f64 = 0.0;
    for step in (0..traj.steps()).step_by(stride) {
        let modal = modal_state(&model, &dx0, traj.times[step])?;
        worst = worst.max((traj.state(step) - modal).amax() / dx0.amax());
    }
    Ok(Check::at_most(
        "modal-reconstruction",
        worst,
        RECONSTRUCTION_TOL,
        format!("{}: disturbance {}", case.name, disturbance.id),
    ))
}

/// Change in the simulated total action when the step is halved.
pub fn grid_convergence(case: &NetworkCase, disturbance: &Disturbance, gain: f64, dt: f64) -> Result<Check> {
    let model = placed_model(case, case.candidate_buses[0], gain)?;
    let dx0 = model.speed_disturbance(&disturbance.speeds)?;
    let coarse = simulated_total_action(&model, &dx0, dt)?;
    let fine = simulated_total_action(&model, &dx0, dt / 2.0)?;
    Ok(Check::at_most(
        "grid-convergence",
        relative(coarse, fine),
        GRID_TOL,
        format!("{}: dt = {dt} vs {}", case.name, dt / 2.0),
    ))
}

/// Analytic eigenvalue sensitivity against re-decomposition at `P_w ± h`,
/// over the electromechanical modes for each listed placement.
pub fn sensitivity(case: &NetworkCase, buses: &[BusId], gain: f64, h: f64) -> Result<Check> {
    let p_w0 = case.wind.base_power;
    let mut worst: f64 = 0.0;
    let mut modes = 0;
    for &bus in buses {
        let model = placed_model(case, bus, gain)?;
        let dec = decompose(&model)?;
        let da = fd_system_matrix(case, p_w0, Some(bus), gain, h)?;
        let analytic = eigen_sensitivity(&dec, &da)?;
        let moved = fd_mode_movement(case, bus, gain, p_w0, h)?;
        for m in dec.electromechanical_modes() {
            let (a, f) = (analytic[m.index], moved[m.index]);
            let scale = a.norm().max(f.norm());
            if scale > 0.0 {
                worst = worst.max((a - f).norm() / scale);
            }
            modes += 1;
        }
    }
    Ok(Check::at_most(
        "eigen-sensitivity",
        worst,
        SENSITIVITY_TOL,
        format!("{}: {modes} modes over buses {buses:?}", case.name),
    ))
}

/// Agreement between the linear and exact total-action distributions.
#[derive(Clone, Debug)]
pub struct Fidelity {
    /// Worst relative difference of the means.
    pub mean_error: f64,
    /// Worst Wasserstein-1 distance as a fraction of the exact std.
    pub wasserstein_ratio: f64,
    pub failures: usize,
}

pub fn linear_fidelity(
    case: &NetworkCase,
    disturbances: &DisturbanceSet,
    gain: f64,
    samples: usize,
    seed: u64,
) -> Result<Fidelity> {
    let p = sample_wind_power(&case.wind, samples, seed);
    let mut out = Fidelity {
        mean_error: 0.0,
        wasserstein_ratio: 0.0,
        failures: 0,
    };
    for d in disturbances.iter() {
        let estimates = prepare_estimates(case, &case.candidate_buses, gain, case.wind.base_power, d, DEFAULT_FD_STEP)?;
        for est in &estimates {
            let sweep = exact_per_sample_action(case, est.bus, gain, &d.speeds, &p);
            out.failures += sweep.failures;
            let (exact, linear): (Vec<f64>, Vec<f64>) = sweep
                .values
                .iter()
                .zip(&p)
                .filter_map(|(v, &pw)| v.map(|v| (v, est.at_wind_power(pw))))
                .unzip();
            if exact.is_empty() {
                continue;
            }
            out.mean_error = out.mean_error.max(relative(mean(&linear), mean(&exact)));
            let spread = std_dev(&exact);
            let w1 = wasserstein1(&linear, &exact);
            let ratio = if spread > 0.0 { w1 / spread } else if w1 == 0.0 { 0.0 } else { f64::INFINITY };
            out.wasserstein_ratio = out.wasserstein_ratio.max(ratio);
        }
    }
    Ok(out)
}

/// Wall-clock ratio of the exact to the linear siting path.
pub fn speedup(case: &NetworkCase, disturbances: &DisturbanceSet, gain: f64, samples: usize, seed: u64) -> Result<f64> {
    let run = |method| -> Result<f64> {
        let opts = SitingOptions {
            gain,
            method,
            ..SitingOptions::default()
        };
        let start = Instant::now();
        chance_constrained_site(case, &case.candidate_buses, disturbances, &case.wind, samples, seed, &opts)?;
        Ok(start.elapsed().as_secs_f64())
    };
    let linear = run(Method::Linear)?;
    let exact = run(Method::Exact)?;
    Ok(exact / linear)
}

/// Largest deviation of `ΣΦ`, of the conditional row sums, and of `Φ`
/// under splitting the first disturbance into two halves.
pub fn probability_algebra(
    case: &NetworkCase,
    disturbances: &DisturbanceSet,
    gain: f64,
    samples: usize,
    seed: u64,
) -> Result<f64> {
    let opts = SitingOptions {
        gain,
        ..SitingOptions::default()
    };
    let r = chance_constrained_site(case, &case.candidate_buses, disturbances, &case.wind, samples, seed, &opts)?;
    let mut worst = (r.phi.iter().sum::<f64>() - 1.0).abs();
    for row in &r.conditional {
        worst = worst.max((row.iter().sum::<f64>() - 1.0).abs());
    }

    let mut split: Vec<Disturbance> = disturbances.as_slice().to_vec();
    let first = split[0].clone();
    split[0].probability = first.probability / 2.0;
    split.push(Disturbance {
        id: format!("{}-copy", first.id),
        probability: first.probability / 2.0,
        ..first
    });
    let split = DisturbanceSet::new(split)?;
    let s = chance_constrained_site(case, &case.candidate_buses, &split, &case.wind, samples, seed, &opts)?;
    for (a, b) in r.phi.iter().zip(&s.phi) {
        worst = worst.max((a - b).abs());
    }
    Ok(worst)
}

/// Two affine candidates crossing at `p_cross`: the first wins below the
/// crossing. Returns `(empirical, analytic, binomial σ)`.
pub fn analytic_crossing(wind: &WindModel, p_cross: f64, samples: usize, seed: u64) -> (f64, f64, f64) {
    let line = |bus, base, gamma| ActionEstimate {
        bus,
        base_total_action: base,
        beta: DVector::zeros(0),
        sensitivity: DVector::zeros(0),
        gamma,
        base_wind_power: 0.0,
    };
    let steep = line(1, 1.0, 2.0);
    let flat = line(2, 1.0 + 2.0 * p_cross, 0.0);
    let p = sample_wind_power(wind, samples, seed);
    let empirical = per_disturbance_probability(&[steep, flat], &p)[0];
    let analytic = wind.power_cdf(p_cross);
    let sigma = (analytic * (1.0 - analytic) / samples as f64).sqrt();
    (empirical, analytic, sigma)
}

/// Winners of the chance-constrained siting and of the dominant-mode
/// baseline on the same samples.
pub fn method_divergence(
    case: &NetworkCase,
    disturbances: &DisturbanceSet,
    gain: f64,
    samples: usize,
    seed: u64,
    benchmark: f64,
) -> Result<(BusId, BusId)> {
    let opts = SitingOptions {
        gain,
        ..SitingOptions::default()
    };
    let site = chance_constrained_site(case, &case.candidate_buses, disturbances, &case.wind, samples, seed, &opts)?;
    let p = sample_wind_power(&case.wind, samples, seed);
    let base = baseline_dominant_mode(case, &case.candidate_buses, gain, &p, benchmark)?;
    Ok((site.winner, base.winner))
}

#[derive(Clone, Copy, Debug)]
pub struct VerifyOptions {
    pub gain: f64,
    pub dt: f64,
    pub samples: usize,
    pub seed: u64,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions {
            gain: crate::system::DEFAULT_GAIN,
            dt: DEFAULT_DT,
            samples: 1000,
            seed: 0,
        }
    }
}

/// Time-domain and modal checks for one case.
pub fn case_report(case: &NetworkCase, disturbances: &DisturbanceSet, opts: &VerifyOptions) -> Report {
    let mut r = Report::default();
    let first = &disturbances.as_slice()[0];
    r.push("total-action-oracle", action_oracle(case, disturbances, opts.gain, opts.dt));
    r.push("action-limit", action_limit(case, disturbances, opts.gain));
    r.push("partial-action", partial_action(case, disturbances, opts.gain, opts.dt));
    r.push("modal-reconstruction", modal_reconstruction(case, first, opts.gain, opts.dt));
    r.push("grid-convergence", grid_convergence(case, first, opts.gain, opts.dt));
    let buses: Vec<BusId> = case.candidate_buses.iter().copied().take(3).collect();
    r.push("eigen-sensitivity", sensitivity(case, &buses, opts.gain, DEFAULT_FD_STEP));
    r
}

/// Sampling-based checks: estimator fidelity, speedup, probability
/// algebra, method divergence.
pub fn sampling_report(case: &NetworkCase, disturbances: &DisturbanceSet, opts: &VerifyOptions) -> Report {
    let mut r = Report::default();
    let tag = |extra: String| format!("{}: N = {}, {extra}", case.name, opts.samples);
    match linear_fidelity(case, disturbances, opts.gain, opts.samples, opts.seed) {
        Ok(f) => {
            r.checks.push(Check::at_most(
                "linear-mean",
                f.mean_error,
                MEAN_TOL,
                tag(format!("{} exact failures", f.failures)),
            ));
            r.checks.push(Check::at_most(
                "linear-wasserstein",
                f.wasserstein_ratio,
                WASSERSTEIN_TOL,
                tag("W1 / exact std".into()),
            ));
        }
        Err(e) => r.checks.push(Check::failed("linear-fidelity", &e)),
    }
    r.push(
        "speedup",
        speedup(case, disturbances, opts.gain, opts.samples, opts.seed)
            .map(|s| Check::at_least("speedup", s, SPEEDUP_MIN, tag("exact / linear wall-clock".into()))),
    );
    r.push(
        "probability-algebra",
        probability_algebra(case, disturbances, opts.gain, opts.samples, opts.seed)
            .map(|d| Check::at_most("probability-algebra", d, PROBABILITY_TOL, tag("sums and split invariance".into()))),
    );
    r.push(
        "method-divergence",
        method_divergence(case, disturbances, opts.gain, opts.samples, opts.seed, DIVERGENCE_BENCHMARK).map(
            |(site, base)| Check {
                name: "method-divergence".into(),
                measured: site as f64,
                tolerance: base as f64,
                passed: site != base,
                detail: format!("{}: chance-constrained bus {site}, dominant-mode bus {base}", case.name),
            },
        ),
    );
    let crossing_samples = 100_000;
    let (emp, exact, sigma) = analytic_crossing(&case.wind, 0.5 * case.wind.rated_power, crossing_samples, opts.seed);
    r.checks.push(Check::at_most(
        "analytic-crossing",
        (emp - exact).abs() / sigma,
        CROSSING_SIGMAS,
        format!("N = {crossing_samples}: empirical {emp:.5}, analytic {exact:.5} (sigmas)"),
    ));
    r
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::bundled;

    #[test]
    fn relative_is_symmetric_and_zero_safe() {
        assert_eq!(relative(0.0, 0.0), 0.0);
        assert_eq!(relative(1.0, 2.0), relative(2.0, 1.0));
    }

    #[test]
    fn crossing_matches_cdf() {
        let w = WindModel {
            rated_power: 1.0,
            ..WindModel::default()
        };
        let (emp, exact, sigma) = analytic_crossing(&w, 0.4, 20_000, 3);
        assert!((emp - exact).abs() <= 4.0 * sigma, "{emp} vs {exact}");
    }

    #[test]
    fn two_machine_oracle_passes() {
        let case = bundled::case("two-machine").unwrap();
        let d = bundled::disturbances("two-machine").unwrap();
        let c = action_oracle(&case, &d, 5.0, DEFAULT_DT).unwrap();
        assert!(c.passed, "{c}");
    }
}
