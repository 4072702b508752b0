//! JSON scenario files: network, customers, scripted orders and the
//! flexibility responses customers make once the market closes.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::allocation::AllocationBounds;
use crate::envelopes::DoeMatrix;
use crate::market::Order;
use crate::money::Money;
use crate::network::{validate_radial, Network, NetworkError, NetworkSpec, PowerProfile};

const CONSISTENCY_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("{0}")]
    Parse(#[from] serde_json::Error),
    #[error("unknown field(s): {}", .0.join(", "))]
    UnknownFields(Vec<String>),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error("customer {0} is listed twice")]
    DuplicateCustomer(String),
    #[error("network customers {network:?} do not match the customer section {section:?}")]
    CustomerMismatch {
        network: Vec<String>,
        section: Vec<String>,
    },
    #[error("customer {customer}: {reason}")]
    InvalidCustomer { customer: String, reason: String },
    #[error("order {id}: {reason}")]
    InvalidOrder { id: u64, reason: String },
    #[error("flexibility response for {customer}: {reason}")]
    InvalidResponse { customer: String, reason: String },
    #[error("period_hours must be positive and finite")]
    InvalidPeriod,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Battery {
    pub max_charge_kw: f64,
    pub max_discharge_kw: f64,
    /// Planned setpoint; positive = discharging.
    pub planned_kw: f64,
    #[serde(default)]
    pub reschedule_allowed: bool,
}

impl Battery {
    pub fn clamp_setpoint(&self, kw: f64) -> f64 {
        kw.clamp(-self.max_charge_kw, self.max_discharge_kw)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CustomerSpec {
    pub node: String,
    /// Expected net power for the period; positive = withdrawal.
    pub expected_net_kw: f64,
    /// Gross consumption behind the meter.
    #[serde(default)]
    pub load_kw: f64,
    pub price_withdraw_eur_per_kwh: f64,
    #[serde(default)]
    pub price_inject_eur_per_kwh: f64,
    #[serde(default)]
    pub pv_kw: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub battery: Option<Battery>,
    pub bounds: AllocationBounds,
    #[serde(default)]
    pub participates_in_market: bool,
}

impl CustomerSpec {
    pub fn planned_battery_kw(&self) -> f64 {
        self.battery.map_or(0.0, |b| b.planned_kw)
    }

    /// Net power for a given battery setpoint.
    pub fn net_with_battery(&self, battery_kw: f64) -> f64 {
        self.load_kw - self.pv_kw - battery_kw
    }

    pub fn price_inject(&self) -> Money {
        Money::from_eur(self.price_inject_eur_per_kwh)
    }

    pub fn price_withdraw(&self) -> Money {
        Money::from_eur(self.price_withdraw_eur_per_kwh)
    }
}

/// Battery setpoint a customer adopts after the market closes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlexResponse {
    pub customer: String,
    pub battery_kw: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DisplayOptions {
    #[serde(default)]
    pub curtailment_decimals: usize,
    #[serde(default)]
    pub utilization_decimals: usize,
}

impl Default for DisplayOptions {
    fn default() -> Self {
        DisplayOptions {
            curtailment_decimals: 0,
            utilization_decimals: 0,
        }
    }
}

fn default_product_time() -> String {
    "12:00".to_string()
}

fn default_period() -> f64 {
    1.0
}

/// On-disk scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioFile {
    #[serde(default)]
    pub name: String,
    #[serde(default = "default_period")]
    pub period_hours: f64,
    #[serde(default = "default_product_time")]
    pub product_time: String,
    pub network: NetworkSpec,
    #[serde(default)]
    pub customers: Vec<CustomerSpec>,
    #[serde(default)]
    pub orders: Vec<Order>,
    #[serde(default)]
    pub flexibility_responses: Vec<FlexResponse>,
    /// Explicit envelopes; when absent, envelopes come from the allocator.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub limits: Option<DoeMatrix>,
    #[serde(default)]
    pub display: DisplayOptions,
}

/// A parsed and validated scenario.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub file: ScenarioFile,
    pub network: Network,
    customers: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Strictness {
    #[default]
    Strict,
    Lenient,
}

/// Parses scenario JSON. Unknown fields are an error in strict mode and
/// returned as warnings in lenient mode.
pub fn parse_scenario(text: &str, strictness: Strictness) -> Result<(ScenarioFile, Vec<String>), ScenarioError> {
    let mut unknown = Vec::new();
    let de = &mut serde_json::Deserializer::from_str(text);
    let file: ScenarioFile = serde_ignored::deserialize(de, |path| unknown.push(path.to_string()))?;
    if !unknown.is_empty() && strictness == Strictness::Strict {
        return Err(ScenarioError::UnknownFields(unknown));
    }
    Ok((file, unknown))
}

pub fn load_scenario(text: &str, strictness: Strictness) -> Result<(Scenario, Vec<String>), ScenarioError> {
    let (file, warnings) = parse_scenario(text, strictness)?;
    Ok((Scenario::new(file)?, warnings))
}

impl ScenarioFile {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }
}

impl Scenario {
    pub fn new(mut file: ScenarioFile) -> Result<Self, ScenarioError> {
        if !(file.period_hours.is_finite() && file.period_hours > 0.0) {
            return Err(ScenarioError::InvalidPeriod);
        }
        let mut customers = BTreeMap::new();
        for (i, c) in file.customers.iter().enumerate() {
            if customers.insert(c.node.clone(), i).is_some() {
                return Err(ScenarioError::DuplicateCustomer(c.node.clone()));
            }
            validate_customer(c)?;
        }
        let section: Vec<String> = file.customers.iter().map(|c| c.node.clone()).collect();
        if file.network.customers.is_empty() {
            file.network.customers = section;
        } else {
            let a: BTreeSet<_> = file.network.customers.iter().collect();
            let b: BTreeSet<_> = section.iter().collect();
            if a != b {
                return Err(ScenarioError::CustomerMismatch {
                    network: file.network.customers.clone(),
                    section,
                });
            }
        }
        let network = validate_radial(&file.network)?;

        let mut ids = BTreeSet::new();
        for o in &file.orders {
            let reason = if !ids.insert(o.id) {
                Some("duplicate id".to_string())
            } else if let Some(&i) = customers.get(&o.customer) {
                (!file.customers[i].participates_in_market)
                    .then(|| format!("{} does not participate in the market", o.customer))
            } else {
                Some(format!("{} is not a customer", o.customer))
            };
            if let Some(reason) = reason {
                return Err(ScenarioError::InvalidOrder { id: o.id, reason });
            }
        }
        for r in &file.flexibility_responses {
            let Some(&i) = customers.get(&r.customer) else {
                return Err(ScenarioError::InvalidResponse {
                    customer: r.customer.clone(),
                    reason: "not a customer".into(),
                });
            };
            let Some(battery) = file.customers[i].battery else {
                return Err(ScenarioError::InvalidResponse {
                    customer: r.customer.clone(),
                    reason: "customer has no battery".into(),
                });
            };
            if battery.clamp_setpoint(r.battery_kw) != r.battery_kw {
                return Err(ScenarioError::InvalidResponse {
                    customer: r.customer.clone(),
                    reason: format!("setpoint {} kW outside battery limits", r.battery_kw),
                });
            }
        }
        Ok(Scenario {
            file,
            network,
            customers,
        })
    }

    pub fn customers(&self) -> &[CustomerSpec] {
        &self.file.customers
    }

    pub fn customer(&self, name: &str) -> Option<&CustomerSpec> {
        self.customers.get(name).map(|&i| &self.file.customers[i])
    }

    pub fn period_hours(&self) -> f64 {
        self.file.period_hours
    }

    pub fn bounds(&self) -> BTreeMap<String, AllocationBounds> {
        self.file
            .customers
            .iter()
            .map(|c| (c.node.clone(), c.bounds))
            .collect()
    }

    pub fn expected_profile(&self) -> PowerProfile {
        self.file
            .customers
            .iter()
            .map(|c| (c.node.clone(), c.expected_net_kw))
            .collect()
    }

    pub fn total_pv_kw(&self) -> f64 {
        self.file.customers.iter().map(|c| c.pv_kw).sum()
    }
}

fn validate_customer(c: &CustomerSpec) -> Result<(), ScenarioError> {
    let fail = |reason: String| {
        Err(ScenarioError::InvalidCustomer {
            customer: c.node.clone(),
            reason,
        })
    };
    let numbers = [
        c.expected_net_kw,
        c.load_kw,
        c.price_withdraw_eur_per_kwh,
        c.price_inject_eur_per_kwh,
        c.pv_kw,
    ];
    if numbers.iter().any(|x| !x.is_finite()) {
        return fail("non-finite value".into());
    }
    if c.load_kw < 0.0 || c.pv_kw < 0.0 {
        return fail("load and PV must be nonnegative".into());
    }
    if c.price_withdraw_eur_per_kwh < 0.0 || c.price_inject_eur_per_kwh < 0.0 {
        return fail("tariffs must be nonnegative".into());
    }
    if !c.bounds.is_valid() {
        return fail("allocation bounds are inconsistent".into());
    }
    if let Some(b) = c.battery {
        if !(b.max_charge_kw >= 0.0 && b.max_discharge_kw >= 0.0) {
            return fail("battery limits must be nonnegative".into());
        }
        if b.clamp_setpoint(b.planned_kw) != b.planned_kw {
            return fail(format!("planned battery setpoint {} kW outside limits", b.planned_kw));
        }
    }
    let derived = c.net_with_battery(c.planned_battery_kw());
    if (derived - c.expected_net_kw).abs() > CONSISTENCY_TOL {
        return fail(format!(
            "expected_net_kw {} differs from load - pv - battery = {}",
            c.expected_net_kw, derived
        ));
    }
    Ok(())
}
