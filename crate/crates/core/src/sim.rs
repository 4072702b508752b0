//! Runs a scenario under the four congestion-management schemes and
//! collects comparable metrics.

use std::collections::BTreeMap;
use std::fmt;

use serde::Serialize;
use thiserror::Error;

use crate::allocation::{allocate_does, AllocationError};
use crate::envelopes::{clamp_to_envelope, DoeMatrix, Envelope, EnvelopeError};
use crate::market::{clear, MarketError, OrderBook};
use crate::money::Money;
use crate::network::{NetworkError, PowerProfile, KW_TOL};
use crate::scenario::{CustomerSpec, Scenario};

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Allocation(#[from] AllocationError),
    #[error(transparent)]
    Market(#[from] MarketError),
    #[error(transparent)]
    Envelope(#[from] EnvelopeError),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error("overload on {line} persists after curtailing all PV injection ({remaining_kw} kW left)")]
    InsufficientCurtailableInjection { line: String, remaining_kw: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum Scheme {
    NoControl,
    Anm,
    StaticKeepSchedule,
    StaticReschedule,
    SecuLex,
}

impl Scheme {
    pub fn label(self) -> &'static str {
        match self {
            Scheme::NoControl => "No Control",
            Scheme::Anm => "ANM",
            Scheme::StaticKeepSchedule => "Static envelopes (keep schedule)",
            Scheme::StaticReschedule => "Static envelopes (reschedule)",
            Scheme::SecuLex => "SecuLEx",
        }
    }

    pub fn incentivizes_flexibility(self) -> &'static str {
        match self {
            Scheme::NoControl | Scheme::Anm => "No",
            Scheme::StaticKeepSchedule | Scheme::StaticReschedule => "Partial",
            Scheme::SecuLex => "Yes",
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// What customers with a reschedulable battery do under static envelopes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FlexBehavior {
    KeepSchedule,
    Reschedule,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CustomerRow {
    pub customer: String,
    pub expected_net_kw: f64,
    pub battery_kw: f64,
    /// Net power the customer intended after any rescheduling.
    pub intended_net_kw: f64,
    pub final_net_kw: f64,
    pub curtailed_injection_kw: f64,
    pub curtailed_withdrawal_kw: f64,
    pub pv_curtailed_kw: f64,
    pub opportunity_loss: Money,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub envelope: Option<Envelope>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub market_payment: Option<Money>,
}

impl CustomerRow {
    pub fn curtailed_kw(&self) -> f64 {
        self.curtailed_injection_kw + self.curtailed_withdrawal_kw
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SchemeReport {
    pub scheme: Scheme,
    pub total_curtailment_kw: f64,
    pub renewable_utilization_pct: f64,
    pub security_violation: bool,
    /// Worst line margin of the realised profile.
    pub worst_margin_kw: f64,
    pub opportunity_loss: Money,
    pub market_social_welfare: Option<Money>,
    pub rows: Vec<CustomerRow>,
}

/// `100 * (pv - pv_curtailed) / pv`, or 100 when there is no PV.
pub fn renewable_utilization(total_pv_kw: f64, pv_curtailed_kw: f64) -> f64 {
    if total_pv_kw <= 0.0 {
        100.0
    } else {
        100.0 * (total_pv_kw - pv_curtailed_kw) / total_pv_kw
    }
}

struct Realised {
    battery_kw: f64,
    intended_net_kw: f64,
    final_net_kw: f64,
}

fn build_report(
    scenario: &Scenario,
    scheme: Scheme,
    realised: &BTreeMap<String, Realised>,
    envelopes: Option<&DoeMatrix>,
    payments: Option<&BTreeMap<String, Money>>,
    welfare: Option<Money>,
) -> Result<SchemeReport, SimError> {
    let hours = scenario.period_hours();
    let mut rows = Vec::with_capacity(scenario.customers().len());
    for c in scenario.customers() {
        let r = &realised[&c.node];
        let delta = r.final_net_kw - r.intended_net_kw;
        let curtailed_injection_kw = delta.max(0.0);
        let curtailed_withdrawal_kw = (-delta).max(0.0);
        let pv_curtailed_kw = curtailed_injection_kw.min(c.pv_kw);
        rows.push(CustomerRow {
            customer: c.node.clone(),
            expected_net_kw: c.expected_net_kw,
            battery_kw: r.battery_kw,
            intended_net_kw: r.intended_net_kw,
            final_net_kw: r.final_net_kw,
            curtailed_injection_kw,
            curtailed_withdrawal_kw,
            pv_curtailed_kw,
            opportunity_loss: Money::times(c.price_inject(), curtailed_injection_kw * hours),
            envelope: envelopes.and_then(|d| d.get(&c.node).copied()),
            market_payment: payments.map(|p| p.get(&c.node).copied().unwrap_or_default()),
        });
    }
    let final_profile: PowerProfile = rows
        .iter()
        .map(|r| (r.customer.clone(), r.final_net_kw))
        .collect();
    let flows = scenario
        .network
        .flows_dense(&scenario.network.dense_profile(&final_profile)?);
    let security = scenario.network.security_of_flows(&flows);
    let pv_curtailed: f64 = rows.iter().map(|r| r.pv_curtailed_kw).sum();
    Ok(SchemeReport {
        scheme,
        total_curtailment_kw: rows.iter().map(CustomerRow::curtailed_kw).sum(),
        renewable_utilization_pct: renewable_utilization(scenario.total_pv_kw(), pv_curtailed),
        security_violation: !security.is_secure(),
        worst_margin_kw: security.worst_margin_kw,
        opportunity_loss: rows.iter().map(|r| r.opportunity_loss).sum(),
        market_social_welfare: welfare,
        rows,
    })
}

fn as_planned(c: &CustomerSpec) -> Realised {
    Realised {
        battery_kw: c.planned_battery_kw(),
        intended_net_kw: c.expected_net_kw,
        final_net_kw: c.expected_net_kw,
    }
}

/// Expected profile realised as is.
pub fn run_no_control(scenario: &Scenario) -> Result<SchemeReport, SimError> {
    let realised = scenario
        .customers()
        .iter()
        .map(|c| (c.node.clone(), as_planned(c)))
        .collect();
    build_report(scenario, Scheme::NoControl, &realised, None, None, None)
}

/// Splits `amount` as equally as possible among `caps`, never exceeding a
/// cap; whatever a capped participant cannot take is re-spread over the
/// others. Returns the shares and the part nobody could absorb.
pub fn waterfill(amount: f64, caps: &[f64]) -> (Vec<f64>, f64) {
    let mut shares = vec![0.0; caps.len()];
    let mut order: Vec<usize> = (0..caps.len()).collect();
    order.sort_by(|&a, &b| caps[a].total_cmp(&caps[b]).then(a.cmp(&b)));
    let mut left = amount;
    let mut remaining = caps.len();
    for &i in &order {
        let share = left / remaining as f64;
        let take = share.min(caps[i]);
        shares[i] = take;
        left -= take;
        remaining -= 1;
    }
    (shares, left.max(0.0))
}

/// Real-time corrective control: on each reverse overload, PV injection of
/// the customers below the line is curtailed in equal shares until the
/// line sits at its limit. Batteries are not controllable.
pub fn run_anm(scenario: &Scenario) -> Result<SchemeReport, SimError> {
    let net = &scenario.network;
    let customers = scenario.customers();
    let names: Vec<&str> = net.customer_names().collect();
    let spec_of: Vec<&CustomerSpec> = names
        .iter()
        .map(|n| scenario.customer(n).expect("customer spec"))
        .collect();
    let mut power: Vec<f64> = spec_of.iter().map(|c| c.expected_net_kw).collect();
    let mut curtailed = vec![0.0; power.len()];
    let curtailable = |pos: usize, power: &[f64], curtailed: &[f64]| {
        (spec_of[pos].pv_kw - curtailed[pos]).min(-power[pos]).max(0.0)
    };

    loop {
        let flows = net.flows_dense(&power);
        let worst = net
            .edge_ids()
            .map(|e| (e, flows[e.0].abs() - net.line(e).limit_kw))
            .filter(|&(_, m)| m > KW_TOL)
            .max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0)));
        let Some((edge, excess)) = worst else { break };
        let label = net.edge_label(edge);
        if flows[edge.0] > 0.0 {
            return Err(SimError::InsufficientCurtailableInjection {
                line: label,
                remaining_kw: excess,
            });
        }
        let below = net.downstream_customers(edge);
        let caps: Vec<f64> = below
            .iter()
            .map(|&p| curtailable(p, &power, &curtailed))
            .collect();
        let (shares, unabsorbed) = waterfill(excess, &caps);
        if unabsorbed > KW_TOL {
            return Err(SimError::InsufficientCurtailableInjection {
                line: label,
                remaining_kw: unabsorbed,
            });
        }
        for (&p, s) in below.iter().zip(shares) {
            power[p] += s;
            curtailed[p] += s;
        }
    }

    let realised = customers
        .iter()
        .map(|c| {
            let pos = net.customer_position(&c.node).expect("customer");
            (
                c.node.clone(),
                Realised {
                    battery_kw: c.planned_battery_kw(),
                    intended_net_kw: c.expected_net_kw,
                    final_net_kw: power[pos],
                },
            )
        })
        .collect();
    build_report(scenario, Scheme::Anm, &realised, None, None, None)
}

/// Smallest battery move that brings the customer's net power into the
/// envelope, limited by the battery's ratings.
fn reschedule_battery(c: &CustomerSpec, env: &Envelope) -> f64 {
    let Some(b) = c.battery.filter(|b| b.reschedule_allowed) else {
        return c.planned_battery_kw();
    };
    let net = c.expected_net_kw;
    let planned = b.planned_kw;
    // net = load - pv - battery, so raising net means lowering the setpoint.
    let wanted = if net < env.lower_kw {
        planned - (env.lower_kw - net)
    } else if net > env.upper_kw {
        planned + (net - env.upper_kw)
    } else {
        planned
    };
    b.clamp_setpoint(wanted)
}

fn initial_envelopes(scenario: &Scenario) -> Result<DoeMatrix, SimError> {
    Ok(allocate_does(&scenario.network, &scenario.bounds())?.doe)
}

fn curtail_into(
    scenario: &Scenario,
    doe: &DoeMatrix,
    battery: &BTreeMap<String, f64>,
) -> Result<BTreeMap<String, Realised>, SimError> {
    let intended: PowerProfile = scenario
        .customers()
        .iter()
        .map(|c| (c.node.clone(), c.net_with_battery(battery[&c.node])))
        .collect();
    let (clamped, _) = clamp_to_envelope(doe, &intended)?;
    Ok(scenario
        .customers()
        .iter()
        .map(|c| {
            (
                c.node.clone(),
                Realised {
                    battery_kw: battery[&c.node],
                    intended_net_kw: intended.get(&c.node),
                    final_net_kw: clamped.get(&c.node),
                },
            )
        })
        .collect())
}

/// Day-ahead fair envelopes with no trading; violations are curtailed.
pub fn run_static_envelopes(scenario: &Scenario, behavior: FlexBehavior) -> Result<SchemeReport, SimError> {
    let doe = initial_envelopes(scenario)?;
    let battery: BTreeMap<String, f64> = scenario
        .customers()
        .iter()
        .map(|c| {
            let kw = match behavior {
                FlexBehavior::KeepSchedule => c.planned_battery_kw(),
                FlexBehavior::Reschedule => reschedule_battery(c, doe.get(&c.node).expect("envelope")),
            };
            (c.node.clone(), kw)
        })
        .collect();
    let realised = curtail_into(scenario, &doe, &battery)?;
    let scheme = match behavior {
        FlexBehavior::KeepSchedule => Scheme::StaticKeepSchedule,
        FlexBehavior::Reschedule => Scheme::StaticReschedule,
    };
    build_report(scenario, scheme, &realised, Some(&doe), None, None)
}

/// Result of the market phase of a scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct MarketSession {
    pub initial_limits: DoeMatrix,
    pub final_limits: DoeMatrix,
    pub acceptances: BTreeMap<u64, f64>,
    pub final_book: OrderBook,
    pub payments: BTreeMap<String, Money>,
    pub social_welfare: Money,
}

/// Allocates envelopes, then submits the scripted orders one at a time,
/// clearing after each submission, and closes the session.
pub fn run_market_session(scenario: &Scenario) -> Result<MarketSession, SimError> {
    let initial_limits = initial_envelopes(scenario)?;
    let mut limits = initial_limits.clone();
    let mut book = OrderBook::new(scenario.file.product_time.clone());
    let mut acceptances: BTreeMap<u64, f64> = BTreeMap::new();
    let mut payments: BTreeMap<String, Money> = BTreeMap::new();
    let mut welfare = Money::ZERO;
    for order in &scenario.file.orders {
        book.submit(order.clone())?;
        let out = clear(&scenario.network, &limits, &book)?;
        for (&id, &a) in &out.acceptances {
            *acceptances.entry(id).or_default() += a;
        }
        for (c, &p) in &out.settlement.payments {
            *payments.entry(c.clone()).or_default() += p;
        }
        welfare += out.settlement.social_welfare;
        limits = out.updated_limits;
        book = out.updated_book;
    }
    book.close()?;
    Ok(MarketSession {
        initial_limits,
        final_limits: limits,
        acceptances,
        final_book: book,
        payments,
        social_welfare: welfare,
    })
}

/// Envelopes traded on the market, then the scripted post-market battery
/// responses, then curtailment into the final envelopes.
pub fn run_seculex(scenario: &Scenario) -> Result<SchemeReport, SimError> {
    let session = run_market_session(scenario)?;
    let mut battery: BTreeMap<String, f64> = scenario
        .customers()
        .iter()
        .map(|c| (c.node.clone(), c.planned_battery_kw()))
        .collect();
    for r in &scenario.file.flexibility_responses {
        battery.insert(r.customer.clone(), r.battery_kw);
    }
    let realised = curtail_into(scenario, &session.final_limits, &battery)?;
    build_report(
        scenario,
        Scheme::SecuLex,
        &realised,
        Some(&session.final_limits),
        Some(&session.payments),
        Some(session.social_welfare),
    )
}

/// All schemes, static envelopes in both behaviours.
pub fn compare(scenario: &Scenario) -> Result<Vec<SchemeReport>, SimError> {
    Ok(vec![
        run_no_control(scenario)?,
        run_anm(scenario)?,
        run_static_envelopes(scenario, FlexBehavior::KeepSchedule)?,
        run_static_envelopes(scenario, FlexBehavior::Reschedule)?,
        run_seculex(scenario)?,
    ])
}
