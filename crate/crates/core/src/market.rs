//! Limit-exchange market for one product period: order book, welfare
//! maximizing security-constrained clearing and pay-as-bid settlement.
//!
//! A cleared buy on the lower bound pushes the buyer's lower limit down
//! (more injection allowed); a cleared sell on the lower bound raises the
//! seller's. Upper-bound orders act symmetrically on the upper limit.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::envelopes::{is_secure_margin, verify_limits, DoeMatrix, EnvelopeError};
use crate::lp::{LinearProgram, LpError, LpStatus, Relation, VarId};
use crate::money::Money;
use crate::network::{Network, KW_TOL};

/// Welfare slack (EUR) allowed when re-solving for maximum volume.
pub const WELFARE_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MarketError {
    #[error("order book is closed")]
    BookClosed,
    #[error("order book is already closed")]
    AlreadyClosed,
    #[error("order id {0} already in the book")]
    DuplicateId(u64),
    #[error("order {0}: reactive power limits are not tradable")]
    ReactiveNotSupported(u64),
    #[error("order {0}: quantity must be positive")]
    NonPositiveDelta(u64),
    #[error("order {0}: price must be finite")]
    NonFinitePrice(u64),
    #[error("order {id} is for product {got}, book trades {expected}")]
    ProductMismatch { id: u64, got: String, expected: String },
    #[error("order {id}: {customer} is not a customer of the network")]
    UnknownCustomer { id: u64, customer: String },
    #[error("unknown order id {0}")]
    UnknownOrderId(u64),
    #[error("input limits are insecure (margin {0} kW)")]
    InsecureInputLimits(f64),
    #[error(transparent)]
    Envelope(#[from] EnvelopeError),
    #[error("clearing program failed: {0}")]
    Solver(String),
}

impl From<LpError> for MarketError {
    fn from(e: LpError) -> Self {
        MarketError::Solver(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Buy,
    Sell,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundSide {
    Lower,
    Upper,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PowerKind {
    #[default]
    Active,
    Reactive,
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Side::Buy => "buy",
            Side::Sell => "sell",
        })
    }
}

impl fmt::Display for BoundSide {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BoundSide::Lower => "lower",
            BoundSide::Upper => "upper",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Order {
    pub id: u64,
    pub customer: String,
    #[serde(rename = "type")]
    pub side: Side,
    pub bound: BoundSide,
    #[serde(default)]
    pub power: PowerKind,
    pub delta_kw: f64,
    pub price_eur_per_kw: f64,
    pub product_time: String,
}

impl Order {
    pub fn price(&self) -> Money {
        Money::from_eur(self.price_eur_per_kw)
    }

    /// Change of the customer's limit per kW accepted.
    pub fn limit_shift(&self) -> f64 {
        match (self.side, self.bound) {
            (Side::Buy, BoundSide::Lower) | (Side::Sell, BoundSide::Upper) => -1.0,
            (Side::Sell, BoundSide::Lower) | (Side::Buy, BoundSide::Upper) => 1.0,
        }
    }

    /// Contribution to social welfare per kW accepted (in €/kW).
    pub fn welfare_coefficient(&self) -> f64 {
        match self.side {
            Side::Buy => self.price().to_eur(),
            Side::Sell => -self.price().to_eur(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BookState {
    Open,
    Closed,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BookEntry {
    pub order: Order,
    pub remaining_kw: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OrderBook {
    product_time: String,
    state: BookState,
    entries: BTreeMap<u64, BookEntry>,
}

impl OrderBook {
    pub fn new(product_time: impl Into<String>) -> Self {
        OrderBook {
            product_time: product_time.into(),
            state: BookState::Open,
            entries: BTreeMap::new(),
        }
    }

    pub fn product_time(&self) -> &str {
        &self.product_time
    }

    pub fn state(&self) -> BookState {
        self.state
    }

    pub fn is_open(&self) -> bool {
        self.state == BookState::Open
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> impl Iterator<Item = &BookEntry> {
        self.entries.values()
    }

    pub fn get(&self, id: u64) -> Option<&BookEntry> {
        self.entries.get(&id)
    }

    pub fn submit(&mut self, order: Order) -> Result<(), MarketError> {
        if !self.is_open() {
            return Err(MarketError::BookClosed);
        }
        if self.entries.contains_key(&order.id) {
            return Err(MarketError::DuplicateId(order.id));
        }
        if order.power == PowerKind::Reactive {
            return Err(MarketError::ReactiveNotSupported(order.id));
        }
        if !(order.delta_kw > 0.0 && order.delta_kw.is_finite()) {
            return Err(MarketError::NonPositiveDelta(order.id));
        }
        if !order.price_eur_per_kw.is_finite() {
            return Err(MarketError::NonFinitePrice(order.id));
        }
        if order.product_time != self.product_time {
            return Err(MarketError::ProductMismatch {
                id: order.id,
                got: order.product_time.clone(),
                expected: self.product_time.clone(),
            });
        }
        self.entries.insert(
            order.id,
            BookEntry {
                remaining_kw: order.delta_kw,
                order,
            },
        );
        Ok(())
    }

    /// Freezes the book; no further submissions or clearings.
    pub fn close(&mut self) -> Result<(), MarketError> {
        if !self.is_open() {
            return Err(MarketError::AlreadyClosed);
        }
        self.state = BookState::Closed;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Settlement {
    /// Positive = the customer pays.
    pub payments: BTreeMap<String, Money>,
    pub order_payments: BTreeMap<u64, Money>,
    pub social_welfare: Money,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClearingOutcome {
    pub acceptances: BTreeMap<u64, f64>,
    pub updated_limits: DoeMatrix,
    pub updated_book: OrderBook,
    pub settlement: Settlement,
    /// Objective of the welfare program in €, before decimal rounding.
    pub welfare_eur: f64,
}

impl ClearingOutcome {
    pub fn payments(&self) -> &BTreeMap<String, Money> {
        &self.settlement.payments
    }

    pub fn social_welfare(&self) -> Money {
        self.settlement.social_welfare
    }
}

/// Pay-as-bid settlement: every accepted order pays (buy) or receives
/// (sell) its own price times its accepted quantity.
pub fn settle(
    acceptances: &BTreeMap<u64, f64>,
    orders: &BTreeMap<u64, Order>,
) -> Result<Settlement, MarketError> {
    let mut payments: BTreeMap<String, Money> = BTreeMap::new();
    let mut order_payments = BTreeMap::new();
    for (&id, &accepted) in acceptances {
        let order = orders.get(&id).ok_or(MarketError::UnknownOrderId(id))?;
        let gross = Money::times(order.price(), accepted);
        let signed = match order.side {
            Side::Buy => gross,
            Side::Sell => -gross,
        };
        order_payments.insert(id, signed);
        *payments.entry(order.customer.clone()).or_default() += signed;
    }
    let social_welfare = payments.values().copied().sum();
    Ok(Settlement {
        payments,
        order_payments,
        social_welfare,
    })
}

struct ClearingModel {
    lp: LinearProgram,
    accept: Vec<(u64, VarId)>,
}

fn build_clearing(network: &Network, doe: &DoeMatrix, book: &OrderBook) -> Result<ClearingModel, MarketError> {
    let (lower, upper) = doe.corners(network)?;
    let n = lower.len();
    let mut lp = LinearProgram::new();
    // Per customer: linear terms of the shift of each bound.
    let mut lower_terms: Vec<Vec<(VarId, f64)>> = vec![Vec::new(); n];
    let mut upper_terms: Vec<Vec<(VarId, f64)>> = vec![Vec::new(); n];
    let mut accept = Vec::with_capacity(book.len());
    for entry in book.entries() {
        let o = &entry.order;
        let pos = network
            .customer_position(&o.customer)
            .ok_or_else(|| MarketError::UnknownCustomer {
                id: o.id,
                customer: o.customer.clone(),
            })?;
        let a = lp.add_var(format!("a_{}", o.id), 0.0, entry.remaining_kw);
        lp.add_objective(a, o.welfare_coefficient());
        let shift = (a, o.limit_shift());
        match o.bound {
            BoundSide::Lower => lower_terms[pos].push(shift),
            BoundSide::Upper => upper_terms[pos].push(shift),
        }
        accept.push((o.id, a));
    }

    let names: Vec<&str> = network.customer_names().collect();
    for pos in 0..n {
        if lower_terms[pos].is_empty() && upper_terms[pos].is_empty() {
            continue;
        }
        // lower' <= upper'
        let terms = lower_terms[pos]
            .iter()
            .copied()
            .chain(upper_terms[pos].iter().map(|&(v, c)| (v, -c)));
        lp.add_constraint(
            format!("order_{}", names[pos]),
            terms,
            Relation::Le,
            upper[pos] - lower[pos],
        );
    }
    for edge in network.edge_ids() {
        let below = network.downstream_customers(edge);
        let limit = network.line(edge).limit_kw;
        let label = network.edge_label(edge);
        for (corner, base, shifts) in [("lower", &lower, &lower_terms), ("upper", &upper, &upper_terms)] {
            let terms: Vec<(VarId, f64)> = below
                .iter()
                .flat_map(|&p| shifts[p].iter().copied())
                .collect();
            if terms.is_empty() {
                continue;
            }
            let constant: f64 = below.iter().map(|&p| base[p]).sum();
            lp.add_constraint(
                format!("{corner}_max{label}"),
                terms.iter().copied(),
                Relation::Le,
                limit - constant,
            );
            lp.add_constraint(
                format!("{corner}_min{label}"),
                terms,
                Relation::Ge,
                -limit - constant,
            );
        }
    }
    Ok(ClearingModel { lp, accept })
}

/// The welfare program that [`clear`] solves first, for inspection.
pub fn clearing_program(network: &Network, doe: &DoeMatrix, book: &OrderBook) -> Result<LinearProgram, MarketError> {
    Ok(build_clearing(network, doe, book)?.lp)
}

/// Accepted quantities are reported on a 1 mW grid when the solver's
/// answer lies within tolerance of a grid point.
const QUANTITY_GRID_KW: f64 = 1e-6;

fn to_grid(x: f64) -> f64 {
    let grid = (x / QUANTITY_GRID_KW).round() * QUANTITY_GRID_KW;
    if (x - grid).abs() <= KW_TOL {
        grid
    } else {
        x
    }
}

fn snap(x: f64, hi: f64) -> f64 {
    if x.abs() <= KW_TOL {
        0.0
    } else if (x - hi).abs() <= KW_TOL {
        hi
    } else {
        x.clamp(0.0, hi)
    }
}

fn shifted_limits(doe: &DoeMatrix, book: &OrderBook, acceptances: &BTreeMap<u64, f64>) -> DoeMatrix {
    let mut limits = doe.clone();
    for (&id, &a) in acceptances {
        let o = &book.get(id).expect("accepted order in book").order;
        if a > 0.0 {
            let env = limits.0.get_mut(&o.customer).expect("customer limits");
            match o.bound {
                BoundSide::Lower => env.lower_kw += o.limit_shift() * a,
                BoundSide::Upper => env.upper_kw += o.limit_shift() * a,
            }
        }
    }
    limits
}

/// Clears the book against the current limits.
///
/// Welfare is maximized first; among welfare-optimal acceptances the one
/// with the largest total volume is returned. Partially filled orders stay
/// in the book with their remaining quantity.
pub fn clear(network: &Network, doe: &DoeMatrix, book: &OrderBook) -> Result<ClearingOutcome, MarketError> {
    if !book.is_open() {
        return Err(MarketError::BookClosed);
    }
    let margin = verify_limits(network, doe)?;
    if !is_secure_margin(margin) {
        return Err(MarketError::InsecureInputLimits(margin));
    }

    let ClearingModel { lp, accept } = build_clearing(network, doe, book)?;
    let mut acceptances = BTreeMap::new();
    let mut welfare_eur = 0.0;
    if !accept.is_empty() {
        let first = lp.solve()?;
        if first.status != LpStatus::Optimal {
            // a = 0 is always feasible for secure input limits.
            return Err(MarketError::Solver(format!("welfare program is {:?}", first.status)));
        }
        welfare_eur = first.objective_value;
        let mut volume = lp.clone();
        volume.add_constraint(
            "welfare_floor",
            lp.objective().iter().copied(),
            Relation::Ge,
            welfare_eur - WELFARE_TOL,
        );
        volume.set_objective(accept.iter().map(|&(_, v)| (v, 1.0)));
        let second = volume.solve()?;
        let sol = if second.is_optimal() { second } else { first };
        for &(id, var) in &accept {
            let remaining = book.get(id).map_or(0.0, |e| e.remaining_kw);
            acceptances.insert(id, snap(sol.value(var), remaining));
        }
    }

    let gridded: BTreeMap<u64, f64> = acceptances
        .iter()
        .map(|(&id, &a)| {
            let remaining = book.get(id).map_or(0.0, |e| e.remaining_kw);
            (id, snap(to_grid(a), remaining))
        })
        .collect();
    let gridded_limits = shifted_limits(doe, book, &gridded);
    if verify_limits(network, &gridded_limits)? <= margin.max(0.0) {
        acceptances = gridded;
    }

    let updated_limits = shifted_limits(doe, book, &acceptances);
    let mut updated_book = book.clone();
    let mut orders = BTreeMap::new();
    for (&id, &a) in &acceptances {
        let entry = updated_book.entries.get_mut(&id).expect("accepted order in book");
        orders.insert(id, entry.order.clone());
        entry.remaining_kw -= a;
        if entry.remaining_kw <= KW_TOL {
            updated_book.entries.remove(&id);
        }
    }
    let settlement = settle(&acceptances, &orders)?;
    Ok(ClearingOutcome {
        acceptances,
        updated_limits,
        updated_book,
        settlement,
        welfare_eur,
    })
}
