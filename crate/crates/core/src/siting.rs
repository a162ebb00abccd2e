//! Chance-constrained actuator siting and the damping-ratio baselines.
//!
//! For every disturbance `x₀` with probability `P(x₀)`, each candidate bus
//! `k` gets the probability `P_k|x₀` that its total action is the minimum
//! among all candidates over the wind samples. The objective is
//! `Φ_k = Σ_x₀ P_k|x₀ · P(x₀)` and the chosen bus is `argmax_k Φ_k`.
//!
//! Ties are resolved toward the lowest bus id, both for the per-sample
//! minimum and for the final maximum. One wind sample vector is shared by
//! all candidates and disturbances. Counting uses integers, so parallel
//! and serial evaluation agree exactly.

use std::time::Instant;

use nalgebra::DVector;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::action::{
    beta_coefficients, eigen_sensitivity, fd_system_matrix, gamma, total_action, ActionEstimate,
    DEFAULT_FD_STEP,
};
use crate::case::{BusId, NetworkCase};
use crate::error::{Error, Result};
use crate::modal::{damping_ratio, decompose, transform_disturbance, ModalDecomposition, ModeInfo};
use crate::powerflow::solve_power_flow;
use crate::system::{build_system_matrix, DEFAULT_GAIN};
use crate::wind::{sample_wind_power, WindModel};

/// Bins per histogram of sampled total actions.
pub const HISTOGRAM_BINS: usize = 40;

const PROBABILITY_TOL: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct Disturbance {
    pub id: String,
    /// Sparse initial state: `(generator id, Δω p.u.)`.
    pub speeds: Vec<(usize, f64)>,
    pub probability: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DisturbanceSet {
    disturbances: Vec<Disturbance>,
}

impl DisturbanceSet {
    pub fn new(disturbances: Vec<Disturbance>) -> Result<DisturbanceSet> {
        if disturbances.is_empty() {
            return Err(Error::Validation("disturbance set is empty".into()));
        }
        for d in &disturbances {
            if !(d.probability > 0.0 && d.probability <= 1.0) {
                return Err(Error::Validation(format!(
                    "disturbance {}: probability {} outside (0, 1]",
                    d.id, d.probability
                )));
            }
        }
        let sum: f64 = disturbances.iter().map(|d| d.probability).sum();
        if (sum - 1.0).abs() > PROBABILITY_TOL {
            return Err(Error::ProbabilityMass { sum });
        }
        Ok(DisturbanceSet { disturbances })
    }

    /// Equally likely disturbances.
    pub fn uniform(items: Vec<(String, Vec<(usize, f64)>)>) -> Result<DisturbanceSet> {
        let p = 1.0 / items.len().max(1) as f64;
        DisturbanceSet::new(
            items
                .into_iter()
                .map(|(id, speeds)| Disturbance {
                    id,
                    speeds,
                    probability: p,
                })
                .collect(),
        )
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Disturbance> {
        self.disturbances.iter()
    }

    pub fn len(&self) -> usize {
        self.disturbances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.disturbances.is_empty()
    }

    pub fn as_slice(&self) -> &[Disturbance] {
        &self.disturbances
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    /// Affine total-action estimate around the base wind injection.
    Linear,
    /// Full power flow and eigendecomposition per sample.
    Exact,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SitingOptions {
    pub gain: f64,
    pub fd_step: f64,
    pub method: Method,
}

impl Default for SitingOptions {
    fn default() -> Self {
        SitingOptions {
            gain: DEFAULT_GAIN,
            fd_step: DEFAULT_FD_STEP,
            method: Method::Linear,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Histogram {
    pub lower: f64,
    pub upper: f64,
    pub counts: Vec<u64>,
}

impl Histogram {
    pub fn empty(lower: f64, upper: f64, bins: usize) -> Histogram {
        Histogram {
            lower,
            upper,
            counts: vec![0; bins],
        }
    }

    pub fn bin(&self, value: f64) -> usize {
        let bins = self.counts.len();
        let width = self.upper - self.lower;
        if !(width > 0.0) {
            return 0;
        }
        let idx = ((value - self.lower) / width * bins as f64).floor();
        (idx.max(0.0) as usize).min(bins - 1)
    }

    pub fn edges(&self, bin: usize) -> (f64, f64) {
        let w = (self.upper - self.lower) / self.counts.len() as f64;
        (self.lower + w * bin as f64, self.lower + w * (bin + 1) as f64)
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Timing {
    pub base_build_seconds: f64,
    pub per_sample_micros: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SitingResult {
    pub candidates: Vec<BusId>,
    pub disturbance_ids: Vec<String>,
    pub disturbance_probabilities: Vec<f64>,
    /// `P_k|x₀`, indexed `[disturbance][candidate]`.
    pub conditional: Vec<Vec<f64>>,
    pub phi: Vec<f64>,
    pub winner: BusId,
    pub samples: usize,
    /// Samples dropped because some candidate could not be evaluated
    /// (exact method only).
    pub failed_samples: usize,
    pub seed: u64,
    pub method: Method,
    pub gain: f64,
    pub base_wind_power: f64,
    /// Sampled total-action histograms, indexed `[disturbance][candidate]`.
    pub histograms: Vec<Vec<Histogram>>,
    pub timing: Timing,
}

/// Base-condition modal data for one actuator placement.
struct Placement {
    bus: BusId,
    dec: ModalDecomposition,
    sensitivity: DVector<Complex64>,
    state: Vec<DVector<f64>>,
}

fn prepare_placements(
    case: &NetworkCase,
    candidates: &[BusId],
    gain: f64,
    p_w0: f64,
    h: f64,
    disturbances: &[Disturbance],
) -> Result<Vec<Placement>> {
    let eq = solve_power_flow(case, p_w0)?;
    candidates
        .par_iter()
        .map(|&bus| {
            let inner = || -> Result<Placement> {
                let model = build_system_matrix(case, &eq, Some(bus), gain)?;
                let dec = decompose(&model)?;
                let da = fd_system_matrix(case, p_w0, Some(bus), gain, h)?;
                let sensitivity = eigen_sensitivity(&dec, &da)?;
                let state = disturbances
                    .iter()
                    .map(|d| model.speed_disturbance(&d.speeds))
                    .collect::<Result<Vec<_>>>()?;
                Ok(Placement {
                    bus,
                    dec,
                    sensitivity,
                    state,
                })
            };
            inner().map_err(|e| e.for_candidate(bus))
        })
        .collect()
}

fn estimate_for(placement: &Placement, disturbance: usize, p_w0: f64) -> Result<ActionEstimate> {
    let z0 = transform_disturbance(&placement.dec, &placement.state[disturbance])?;
    let base_total_action = total_action(&placement.dec, &z0)?;
    let beta = beta_coefficients(&placement.dec, &z0)?;
    let gamma = gamma(&beta, &placement.sensitivity)?;
    Ok(ActionEstimate {
        bus: placement.bus,
        base_total_action,
        beta,
        sensitivity: placement.sensitivity.clone(),
        gamma,
        base_wind_power: p_w0,
    })
}

/// Linear total-action estimates for every candidate under one disturbance.
pub fn prepare_estimates(
    case: &NetworkCase,
    candidates: &[BusId],
    gain: f64,
    p_w0: f64,
    disturbance: &Disturbance,
    h: f64,
) -> Result<Vec<ActionEstimate>> {
    let placements = prepare_placements(case, candidates, gain, p_w0, h, std::slice::from_ref(disturbance))?;
    placements
        .iter()
        .map(|p| estimate_for(p, 0, p_w0).map_err(|e| e.for_candidate(p.bus)))
        .collect()
}

/// Index of the smallest value; ties go to the lowest bus id.
fn argmin_candidate(values: &[f64], buses: &[BusId]) -> usize {
    let mut best = 0;
    for k in 1..values.len() {
        let (v, b) = (values[k], values[best]);
        if v < b || (v == b && buses[k] < buses[best]) {
            best = k;
        }
    }
    best
}

/// Index of the largest value; ties go to the lowest bus id.
fn argmax_candidate(values: &[f64], buses: &[BusId]) -> usize {
    let neg: Vec<f64> = values.iter().map(|v| -v).collect();
    argmin_candidate(&neg, buses)
}

fn fractions(counts: &[u64]) -> Vec<f64> {
    let total: u64 = counts.iter().sum();
    counts
        .iter()
        .map(|&c| if total == 0 { 0.0 } else { c as f64 / total as f64 })
        .collect()
}

fn count_winners(estimates: &[ActionEstimate], samples: &[f64]) -> Vec<u64> {
    let buses: Vec<BusId> = estimates.iter().map(|e| e.bus).collect();
    let m = estimates.len();
    samples
        .par_chunks(4096)
        .fold(
            || vec![0u64; m],
            |mut counts, chunk| {
                let mut values = vec![0.0; m];
                for &p in chunk {
                    for (v, e) in values.iter_mut().zip(estimates) {
                        *v = e.at_wind_power(p);
                    }
                    counts[argmin_candidate(&values, &buses)] += 1;
                }
                counts
            },
        )
        .reduce(|| vec![0u64; m], add_counts)
}

fn add_counts(mut a: Vec<u64>, b: Vec<u64>) -> Vec<u64> {
    for (x, y) in a.iter_mut().zip(b) {
        *x += y;
    }
    a
}

/// Fraction of samples on which each candidate attains the minimum
/// estimated total action.
pub fn per_disturbance_probability(estimates: &[ActionEstimate], samples: &[f64]) -> Vec<f64> {
    fractions(&count_winners(estimates, samples))
}

fn linear_histograms(estimates: &[ActionEstimate], samples: &[f64]) -> Vec<Histogram> {
    let (pmin, pmax) = samples
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &p| (lo.min(p), hi.max(p)));
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for e in estimates {
        for p in [pmin, pmax] {
            let v = e.at_wind_power(p);
            lo = lo.min(v);
            hi = hi.max(v);
        }
    }
    estimates
        .iter()
        .map(|e| {
            let template = Histogram::empty(lo, hi, HISTOGRAM_BINS);
            let counts = samples
                .par_chunks(4096)
                .fold(
                    || vec![0u64; HISTOGRAM_BINS],
                    |mut c, chunk| {
                        for &p in chunk {
                            c[template.bin(e.at_wind_power(p))] += 1;
                        }
                        c
                    },
                )
                .reduce(|| vec![0u64; HISTOGRAM_BINS], add_counts);
            Histogram { counts, ..template }
        })
        .collect()
}

fn value_histograms(values: &[Vec<f64>]) -> Vec<Histogram> {
    let (lo, hi) = values
        .iter()
        .flatten()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let (lo, hi) = if lo.is_finite() { (lo, hi) } else { (0.0, 0.0) };
    values
        .iter()
        .map(|vals| {
            let mut h = Histogram::empty(lo, hi, HISTOGRAM_BINS);
            for &v in vals {
                let b = h.bin(v);
                h.counts[b] += 1;
            }
            h
        })
        .collect()
}

pub fn chance_constrained_site(
    case: &NetworkCase,
    candidates: &[BusId],
    disturbances: &DisturbanceSet,
    wind: &WindModel,
    n: usize,
    seed: u64,
    opts: &SitingOptions,
) -> Result<SitingResult> {
    if n == 0 {
        return Err(Error::Validation("sample count must be at least 1".into()));
    }
    if candidates.is_empty() {
        return Err(Error::Validation("no candidate buses".into()));
    }
    let p_w0 = wind.base_power;
    let samples = sample_wind_power(wind, n, seed);

    let start = Instant::now();
    let placements = prepare_placements(
        case,
        candidates,
        opts.gain,
        p_w0,
        opts.fd_step,
        disturbances.as_slice(),
    )?;
    let mut estimates = Vec::with_capacity(disturbances.len());
    for d in 0..disturbances.len() {
        let row = placements
            .iter()
            .map(|p| estimate_for(p, d, p_w0).map_err(|e| e.for_candidate(p.bus)))
            .collect::<Result<Vec<_>>>()?;
        estimates.push(row);
    }
    let base_build_seconds = start.elapsed().as_secs_f64();

    let start = Instant::now();
    let (conditional, histograms, failed_samples) = match opts.method {
        Method::Linear => {
            let conditional = estimates
                .iter()
                .map(|row| per_disturbance_probability(row, &samples))
                .collect();
            let histograms = estimates.iter().map(|row| linear_histograms(row, &samples)).collect();
            (conditional, histograms, 0)
        }
        Method::Exact => exact_counts(case, candidates, disturbances, opts.gain, &samples),
    };
    let per_sample_micros = start.elapsed().as_secs_f64() * 1e6 / n as f64;

    let probabilities: Vec<f64> = disturbances.iter().map(|d| d.probability).collect();
    let phi = aggregate(&conditional, &probabilities);
    let winner = candidates[argmax_candidate(&phi, candidates)];

    Ok(SitingResult {
        candidates: candidates.to_vec(),
        disturbance_ids: disturbances.iter().map(|d| d.id.clone()).collect(),
        disturbance_probabilities: probabilities,
        conditional,
        phi,
        winner,
        samples: n,
        failed_samples,
        seed,
        method: opts.method,
        gain: opts.gain,
        base_wind_power: p_w0,
        histograms,
        timing: Timing {
            base_build_seconds,
            per_sample_micros,
        },
    })
}

/// `Φ_k = Σ_x₀ P_k|x₀ · P(x₀)`.
pub fn aggregate(conditional: &[Vec<f64>], probabilities: &[f64]) -> Vec<f64> {
    let m = conditional.first().map_or(0, |r| r.len());
    let mut phi = vec![0.0; m];
    for (row, &p) in conditional.iter().zip(probabilities) {
        for (acc, &pk) in phi.iter_mut().zip(row) {
            *acc += pk * p;
        }
    }
    phi
}

/// Exact total actions for every (disturbance, candidate) at one wind
/// injection, `[disturbance][candidate]`.
fn exact_sample(
    case: &NetworkCase,
    candidates: &[BusId],
    disturbances: &DisturbanceSet,
    gain: f64,
    p_w: f64,
) -> Result<Vec<Vec<f64>>> {
    let eq = solve_power_flow(case, p_w)?;
    let mut out = vec![Vec::with_capacity(candidates.len()); disturbances.len()];
    for &bus in candidates {
        let model = build_system_matrix(case, &eq, Some(bus), gain)?;
        let dec = decompose(&model)?;
        for (d, dist) in disturbances.iter().enumerate() {
            let z0 = transform_disturbance(&dec, &model.speed_disturbance(&dist.speeds)?)?;
            out[d].push(total_action(&dec, &z0)?);
        }
    }
    Ok(out)
}

fn exact_counts(
    case: &NetworkCase,
    candidates: &[BusId],
    disturbances: &DisturbanceSet,
    gain: f64,
    samples: &[f64],
) -> (Vec<Vec<f64>>, Vec<Vec<Histogram>>, usize) {
    let per_sample: Vec<Option<Vec<Vec<f64>>>> = samples
        .par_iter()
        .map(|&p| exact_sample(case, candidates, disturbances, gain, p).ok())
        .collect();
    let failed = per_sample.iter().filter(|s| s.is_none()).count();
    let m = candidates.len();
    let mut conditional = Vec::with_capacity(disturbances.len());
    let mut histograms = Vec::with_capacity(disturbances.len());
    for d in 0..disturbances.len() {
        let mut counts = vec![0u64; m];
        let mut values = vec![Vec::new(); m];
        for s in per_sample.iter().flatten() {
            counts[argmin_candidate(&s[d], candidates)] += 1;
            for k in 0..m {
                values[k].push(s[d][k]);
            }
        }
        conditional.push(fractions(&counts));
        histograms.push(value_histograms(&values));
    }
    (conditional, histograms, failed)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BenchmarkMode {
    /// Only the least-damped electromechanical mode must meet the benchmark.
    Dominant,
    /// Every electromechanical mode must meet the benchmark.
    All,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BaselineOptions {
    pub gain: f64,
    pub fd_step: f64,
    /// Re-solve eigenvalues per sample instead of first-order movement.
    pub exact: bool,
}

impl Default for BaselineOptions {
    fn default() -> Self {
        BaselineOptions {
            gain: DEFAULT_GAIN,
            fd_step: DEFAULT_FD_STEP,
            exact: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BaselineResult {
    pub mode: BenchmarkMode,
    pub benchmark: f64,
    pub candidates: Vec<BusId>,
    pub probabilities: Vec<f64>,
    pub winner: BusId,
    /// Least-damped electromechanical mode at the base condition, per candidate.
    pub dominant: Vec<ModeInfo>,
}

pub fn baseline_dominant_mode(
    case: &NetworkCase,
    candidates: &[BusId],
    gain: f64,
    samples: &[f64],
    benchmark: f64,
) -> Result<BaselineResult> {
    let opts = BaselineOptions {
        gain,
        ..BaselineOptions::default()
    };
    baseline(case, candidates, samples, benchmark, BenchmarkMode::Dominant, &opts)
}

pub fn baseline_all_modes(
    case: &NetworkCase,
    candidates: &[BusId],
    gain: f64,
    samples: &[f64],
    benchmark: f64,
) -> Result<BaselineResult> {
    let opts = BaselineOptions {
        gain,
        ..BaselineOptions::default()
    };
    baseline(case, candidates, samples, benchmark, BenchmarkMode::All, &opts)
}

/// Probability, per candidate, that the benchmark damping ratio is met
/// over the wind samples; the winner maximizes it.
pub fn baseline(
    case: &NetworkCase,
    candidates: &[BusId],
    samples: &[f64],
    benchmark: f64,
    mode: BenchmarkMode,
    opts: &BaselineOptions,
) -> Result<BaselineResult> {
    if !(0.0..=1.0).contains(&benchmark) {
        return Err(Error::Validation(format!("benchmark damping ratio {benchmark} outside [0, 1]")));
    }
    if samples.is_empty() || candidates.is_empty() {
        return Err(Error::Validation("baseline needs at least one sample and one candidate".into()));
    }
    let p_w0 = case.wind.base_power;
    let placements = prepare_placements(case, candidates, opts.gain, p_w0, opts.fd_step, &[])?;

    let mut probabilities = Vec::with_capacity(candidates.len());
    let mut dominant = Vec::with_capacity(candidates.len());
    for pl in &placements {
        let em = pl.dec.electromechanical_modes();
        if em.is_empty() {
            return Err(Error::NoOscillatoryMode.for_candidate(pl.bus));
        }
        let dom = *em
            .iter()
            .min_by(|a, b| a.damping_ratio.total_cmp(&b.damping_ratio))
            .unwrap();
        dominant.push(dom);

        let tracked: Vec<usize> = match mode {
            BenchmarkMode::Dominant => vec![dom.index],
            BenchmarkMode::All => em.iter().map(|m| m.index).collect(),
        };
        let predicted = |i: usize, p: f64| pl.dec.eigenvalues[i] + pl.sensitivity[i] * (p - p_w0);

        let hits: u64 = if opts.exact {
            samples
                .par_iter()
                .map(|&p| {
                    let moved = exact_eigenvalues(case, pl.bus, opts.gain, p)?;
                    let ok = tracked.iter().all(|&i| {
                        let target = predicted(i, p);
                        let nearest = moved
                            .iter()
                            .min_by(|a, b| (*a - target).norm().total_cmp(&(*b - target).norm()))
                            .copied()
                            .unwrap_or(target);
                        damping_ratio(nearest) >= benchmark
                    });
                    Ok(ok as u64)
                })
                .collect::<Result<Vec<u64>>>()
                .map_err(|e| e.for_candidate(pl.bus))?
                .into_iter()
                .sum()
        } else {
            samples
                .par_iter()
                .map(|&p| {
                    tracked
                        .iter()
                        .all(|&i| damping_ratio(predicted(i, p)) >= benchmark) as u64
                })
                .sum()
        };
        probabilities.push(hits as f64 / samples.len() as f64);
    }

    let winner = candidates[argmax_candidate(&probabilities, candidates)];
    Ok(BaselineResult {
        mode,
        benchmark,
        candidates: candidates.to_vec(),
        probabilities,
        winner,
        dominant,
    })
}

fn exact_eigenvalues(case: &NetworkCase, bus: BusId, gain: f64, p_w: f64) -> Result<Vec<Complex64>> {
    let eq = solve_power_flow(case, p_w)?;
    let model = build_system_matrix(case, &eq, Some(bus), gain)?;
    Ok(decompose(&model)?
        .eigenvalues
        .into_iter()
        .filter(|l| l.im > 0.0)
        .collect())
}
