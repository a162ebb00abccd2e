//! Static grid description.
//!
//! All electrical quantities are per unit on the case's system base
//! (`base_mva`). Inertia constants are in seconds on the same base and
//! damping coefficients are p.u. power per p.u. speed deviation.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::wind::WindModel;

pub type BusId = usize;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BusKind {
    Slack,
    Pv,
    Pq,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bus {
    pub id: BusId,
    pub kind: BusKind,
    /// Voltage magnitude set point (slack and PV buses), p.u.
    #[serde(default = "one")]
    pub v: f64,
    #[serde(default)]
    pub pd: f64,
    #[serde(default)]
    pub qd: f64,
    /// Shunt conductance, p.u.
    #[serde(default)]
    pub gs: f64,
    /// Shunt susceptance, p.u. (positive = capacitive).
    #[serde(default)]
    pub bs: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Branch {
    pub from: BusId,
    pub to: BusId,
    #[serde(default)]
    pub r: f64,
    pub x: f64,
    /// Total line-charging susceptance, split equally between ends.
    #[serde(default)]
    pub b: f64,
}

impl Branch {
    /// An infinite series impedance is an open branch.
    pub fn in_service(&self) -> bool {
        self.r.is_finite() && self.x.is_finite()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Generator {
    pub id: usize,
    pub bus: BusId,
    /// Inertia constant H, seconds.
    pub h: f64,
    /// Damping coefficient D.
    pub d: f64,
    /// Transient reactance x'd.
    pub xd: f64,
    /// Active power dispatch. Ignored for the slack generator.
    #[serde(default)]
    pub p: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkCase {
    #[serde(default)]
    pub name: String,
    #[serde(default = "default_base")]
    pub base_mva: f64,
    #[serde(default = "default_frequency")]
    pub frequency_hz: f64,
    pub wind_bus: BusId,
    pub candidate_buses: Vec<BusId>,
    #[serde(rename = "bus")]
    pub buses: Vec<Bus>,
    #[serde(rename = "branch", default)]
    pub branches: Vec<Branch>,
    #[serde(rename = "generator")]
    pub generators: Vec<Generator>,
    #[serde(default)]
    pub wind: WindModel,
}

fn default_base() -> f64 {
    100.0
}

fn default_frequency() -> f64 {
    60.0
}

impl NetworkCase {
    pub fn bus_index(&self, id: BusId) -> Option<usize> {
        self.buses.iter().position(|b| b.id == id)
    }

    pub fn generator_at(&self, bus: BusId) -> Option<&Generator> {
        self.generators.iter().find(|g| g.bus == bus)
    }

    pub fn slack_index(&self) -> usize {
        self.buses
            .iter()
            .position(|b| b.kind == BusKind::Slack)
            .expect("validated case has a slack bus")
    }

    /// Synchronous speed in rad/s.
    pub fn omega_s(&self) -> f64 {
        2.0 * std::f64::consts::PI * self.frequency_hz
    }

    pub fn total_load(&self) -> f64 {
        self.buses.iter().map(|b| b.pd).sum()
    }

    /// Checks every structural invariant of the case.
    pub fn validate(&self) -> Result<()> {
        let invalid = |msg: String| Err(Error::Validation(msg));

        if !(self.base_mva > 0.0) || !(self.frequency_hz > 0.0) {
            return invalid("base_mva and frequency_hz must be positive".into());
        }

        let mut seen = HashSet::new();
        for bus in &self.buses {
            if !seen.insert(bus.id) {
                return invalid(format!("duplicate bus id {}", bus.id));
            }
            if !(bus.v > 0.0) {
                return invalid(format!("bus {}: voltage set point must be positive", bus.id));
            }
        }
        let slack = self.buses.iter().filter(|b| b.kind == BusKind::Slack).count();
        if slack != 1 {
            return invalid(format!("expected exactly one slack bus, found {slack}"));
        }

        for (i, br) in self.branches.iter().enumerate() {
            for end in [br.from, br.to] {
                if self.bus_index(end).is_none() {
                    return invalid(format!("branch {i} references unknown bus {end}"));
                }
            }
            if br.from == br.to {
                return invalid(format!("branch {i} connects bus {} to itself", br.from));
            }
            if br.in_service() && br.r == 0.0 && br.x == 0.0 {
                return invalid(format!("branch {i} has zero series impedance"));
            }
            if br.r < 0.0 {
                return invalid(format!("branch {i} has negative resistance"));
            }
        }

        if self.generators.len() < 2 {
            return invalid(format!(
                "at least two generators are required, found {}",
                self.generators.len()
            ));
        }
        let mut gen_ids = HashSet::new();
        let mut gen_buses = HashSet::new();
        for g in &self.generators {
            if !gen_ids.insert(g.id) {
                return invalid(format!("duplicate generator id {}", g.id));
            }
            let Some(bi) = self.bus_index(g.bus) else {
                return invalid(format!("generator {} references unknown bus {}", g.id, g.bus));
            };
            if !gen_buses.insert(g.bus) {
                return invalid(format!("bus {} hosts more than one generator", g.bus));
            }
            if self.buses[bi].kind == BusKind::Pq {
                return invalid(format!("generator {} sits on PQ bus {}", g.id, g.bus));
            }
            if !(g.h > 0.0) {
                return invalid(format!("generator {}: inertia constant H must be positive", g.id));
            }
            if !(g.d > 0.0) {
                return invalid(format!("generator {}: damping D must be positive", g.id));
            }
            if !(g.xd > 0.0) {
                return invalid(format!("generator {}: transient reactance must be positive", g.id));
            }
        }
        for bus in &self.buses {
            if bus.kind != BusKind::Pq && !gen_buses.contains(&bus.id) {
                return invalid(format!("{:?} bus {} has no generator", bus.kind, bus.id));
            }
        }

        if self.bus_index(self.wind_bus).is_none() {
            return invalid(format!("wind bus {} does not exist", self.wind_bus));
        }
        if self.candidate_buses.is_empty() {
            return invalid("candidate bus list is empty".into());
        }
        let mut cand = HashSet::new();
        for &k in &self.candidate_buses {
            if !gen_buses.contains(&k) {
                return invalid(format!("candidate bus {k} is not a generator bus"));
            }
            if !cand.insert(k) {
                return invalid(format!("candidate bus {k} listed twice"));
            }
        }

        self.wind.validate()
    }
}
