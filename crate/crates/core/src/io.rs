//! Case and disturbance files, result files, and the bundled cases.
//!
//! Both input formats are TOML; the schemas are described in
//! `cases/README.md`. Unknown keys are rejected.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::case::{BusId, NetworkCase};
use crate::error::{Error, Result};
use crate::siting::{Disturbance, DisturbanceSet, Method, SitingResult};

/// Default speed deviation of a disturbed generator, p.u.
pub const DEFAULT_MAGNITUDE: f64 = 0.01;
/// Tolerance on explicit disturbance probabilities before normalization.
pub const EXPLICIT_MASS_TOL: f64 = 1e-9;

pub const SUMMARY_FILE: &str = "summary.toml";
pub const CONDITIONAL_FILE: &str = "conditional.csv";
pub const HISTOGRAM_FILE: &str = "histograms.csv";

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

fn parse_error(origin: &str, err: toml::de::Error) -> Error {
    Error::Parse {
        path: origin.to_string(),
        message: err.to_string().trim_end().replace('\n', " | "),
    }
}

pub fn parse_case(path: &Path) -> Result<NetworkCase> {
    parse_case_str(&read(path)?, &path.display().to_string())
}

pub fn parse_case_str(text: &str, origin: &str) -> Result<NetworkCase> {
    let case: NetworkCase = toml::from_str(text).map_err(|e| parse_error(origin, e))?;
    case.validate()?;
    Ok(case)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
enum ProbabilityMode {
    #[default]
    Uniform,
    Explicit,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct DisturbanceFile {
    #[serde(default)]
    probabilities: ProbabilityMode,
    #[serde(default = "default_magnitude")]
    magnitude: f64,
    #[serde(rename = "disturbance")]
    disturbances: Vec<DisturbanceEntry>,
}

fn default_magnitude() -> f64 {
    DEFAULT_MAGNITUDE
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct DisturbanceEntry {
    id: String,
    generators: Vec<usize>,
    #[serde(default)]
    deviations: Option<Vec<f64>>,
    #[serde(default)]
    magnitude: Option<f64>,
    #[serde(default)]
    probability: Option<f64>,
}

pub fn parse_disturbances(path: &Path) -> Result<DisturbanceSet> {
    parse_disturbances_str(&read(path)?, &path.display().to_string())
}

pub fn parse_disturbances_str(text: &str, origin: &str) -> Result<DisturbanceSet> {
    let file: DisturbanceFile = toml::from_str(text).map_err(|e| parse_error(origin, e))?;
    if file.disturbances.is_empty() {
        return Err(Error::Validation(format!("{origin}: no disturbances")));
    }
    let mut items = Vec::with_capacity(file.disturbances.len());
    for d in file.disturbances {
        let magnitude = d.magnitude.unwrap_or(file.magnitude);
        let values = match d.deviations {
            Some(v) if v.len() != d.generators.len() => {
                return Err(Error::Validation(format!(
                    "disturbance {}: {} deviations for {} generators",
                    d.id,
                    v.len(),
                    d.generators.len()
                )))
            }
            Some(v) => v,
            None => vec![magnitude; d.generators.len()],
        };
        let probability = match (file.probabilities, d.probability) {
            (ProbabilityMode::Explicit, Some(p)) => p,
            (ProbabilityMode::Explicit, None) => {
                return Err(Error::Validation(format!("disturbance {}: missing probability", d.id)))
            }
            (ProbabilityMode::Uniform, Some(_)) => {
                return Err(Error::Validation(format!(
                    "disturbance {}: probability given but file uses uniform probabilities",
                    d.id
                )))
            }
            (ProbabilityMode::Uniform, None) => 0.0,
        };
        items.push(Disturbance {
            id: d.id,
            speeds: d.generators.into_iter().zip(values).collect(),
            probability,
        });
    }

    match file.probabilities {
        ProbabilityMode::Uniform => {
            let p = 1.0 / items.len() as f64;
            items.iter_mut().for_each(|d| d.probability = p);
        }
        ProbabilityMode::Explicit => {
            let sum: f64 = items.iter().map(|d| d.probability).sum();
            if !((sum - 1.0).abs() <= EXPLICIT_MASS_TOL) {
                return Err(Error::ProbabilityMass { sum });
            }
            items.iter_mut().for_each(|d| d.probability /= sum);
        }
    }
    DisturbanceSet::new(items)
}

/// Run summary as written to `summary.toml`. Timings are deliberately not
/// part of it so that reruns are byte-identical.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Summary {
    pub method: Method,
    pub samples: usize,
    pub failed_samples: usize,
    pub seed: u64,
    pub gain: f64,
    pub base_wind_power: f64,
    pub winner: BusId,
    #[serde(rename = "candidate")]
    pub candidates: Vec<CandidateSummary>,
    #[serde(rename = "disturbance")]
    pub disturbances: Vec<DisturbanceSummary>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CandidateSummary {
    pub bus: BusId,
    pub phi: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DisturbanceSummary {
    pub id: String,
    pub probability: f64,
    /// `P_k|x₀` in candidate order.
    pub conditional: Vec<f64>,
}

impl Summary {
    pub fn from_result(r: &SitingResult) -> Summary {
        Summary {
            method: r.method,
            samples: r.samples,
            failed_samples: r.failed_samples,
            seed: r.seed,
            gain: r.gain,
            base_wind_power: r.base_wind_power,
            winner: r.winner,
            candidates: r
                .candidates
                .iter()
                .zip(&r.phi)
                .map(|(&bus, &phi)| CandidateSummary { bus, phi })
                .collect(),
            disturbances: r
                .disturbance_ids
                .iter()
                .zip(&r.disturbance_probabilities)
                .zip(&r.conditional)
                .map(|((id, &probability), row)| DisturbanceSummary {
                    id: id.clone(),
                    probability,
                    conditional: row.clone(),
                })
                .collect(),
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("summary serializes")
    }

    pub fn parse(text: &str) -> Result<Summary> {
        toml::from_str(text).map_err(|e| parse_error(SUMMARY_FILE, e))
    }
}

fn csv_error(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Io(std::io::Error::other(format!("{other:?}"))),
    }
}

/// Writes the summary, the conditional-probability matrix and the sampled
/// total-action histograms into `dir`.
pub fn emit_results(result: &SitingResult, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(SUMMARY_FILE), Summary::from_result(result).to_toml())?;

    let mut w = csv::Writer::from_path(dir.join(CONDITIONAL_FILE)).map_err(csv_error)?;
    let mut header = vec!["disturbance".to_string(), "probability".to_string()];
    header.extend(result.candidates.iter().map(|b| format!("bus_{b}")));
    w.write_record(&header).map_err(csv_error)?;
    for ((id, p), row) in result
        .disturbance_ids
        .iter()
        .zip(&result.disturbance_probabilities)
        .zip(&result.conditional)
    {
        let mut rec = vec![id.clone(), p.to_string()];
        rec.extend(row.iter().map(|v| v.to_string()));
        w.write_record(&rec).map_err(csv_error)?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(dir.join(HISTOGRAM_FILE)).map_err(csv_error)?;
    w.write_record(["disturbance", "bus", "bin", "lower", "upper", "count"])
        .map_err(csv_error)?;
    for (id, row) in result.disturbance_ids.iter().zip(&result.histograms) {
        for (bus, hist) in result.candidates.iter().zip(row) {
            for (bin, count) in hist.counts.iter().enumerate() {
                let (lo, hi) = hist.edges(bin);
                w.write_record([
                    id.clone(),
                    bus.to_string(),
                    bin.to_string(),
                    lo.to_string(),
                    hi.to_string(),
                    count.to_string(),
                ])
                .map_err(csv_error)?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Desk-scale cases shipped with the crate.
pub mod bundled {
    use super::*;

    pub const NAMES: [&str; 3] = ["two-machine", "three-machine", "two-area"];

    fn sources(name: &str) -> Option<(&'static str, &'static str)> {
        match name {
            "two-machine" => Some((
                include_str!("../cases/two_machine.toml"),
                include_str!("../cases/two_machine_disturbances.toml"),
            )),
            "three-machine" => Some((
                include_str!("../cases/three_machine.toml"),
                include_str!("../cases/three_machine_disturbances.toml"),
            )),
            "two-area" => Some((
                include_str!("../cases/two_area.toml"),
                include_str!("../cases/two_area_disturbances.toml"),
            )),
            _ => None,
        }
    }

    fn unknown(name: &str) -> Error {
        Error::Validation(format!("unknown bundled case '{name}' (known: {})", NAMES.join(", ")))
    }

    pub fn case(name: &str) -> Result<NetworkCase> {
        let (text, _) = sources(name).ok_or_else(|| unknown(name))?;
        parse_case_str(text, &format!("builtin:{name}"))
    }

    pub fn disturbances(name: &str) -> Result<DisturbanceSet> {
        let (_, text) = sources(name).ok_or_else(|| unknown(name))?;
        parse_disturbances_str(text, &format!("builtin:{name}"))
    }
}
