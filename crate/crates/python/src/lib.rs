//! Python bindings. The module is importable as `seculex` once the built
//! library is copied to `seculex.so` (or the platform's extension suffix).

use std::collections::BTreeMap;

use pyo3::create_exception;
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};

use seculex::allocation::AllocationBounds;
use seculex::envelopes::{verify_limits, verify_limits_oracle, DoeMatrix, Envelope};
use seculex::market::{BoundSide, OrderBook, PowerKind, Side};
use seculex::network::{validate_radial, Line, NetworkSpec};
use seculex::scenario::{load_scenario, Strictness};
use seculex::sim::SchemeReport;
use seculex::{allocate_does, clear, PowerProfile};

create_exception!(seculex, SecuLexError, pyo3::exceptions::PyException, "Domain error raised by seculex.");
create_exception!(seculex, InfeasibleError, SecuLexError, "No secure solution satisfies the guarantees.");

fn err(e: impl std::fmt::Display) -> PyErr {
    SecuLexError::new_err(e.to_string())
}

fn allocation_err(e: seculex::AllocationError) -> PyErr {
    match e {
        seculex::AllocationError::InfeasibleGuarantees { .. } => InfeasibleError::new_err(e.to_string()),
        other => err(other),
    }
}

fn to_doe(limits: BTreeMap<String, (f64, f64)>) -> DoeMatrix {
    DoeMatrix(
        limits
            .into_iter()
            .map(|(k, (lo, up))| (k, Envelope::new(lo, up)))
            .collect(),
    )
}

fn from_doe(doe: &DoeMatrix) -> BTreeMap<String, (f64, f64)> {
    doe.iter()
        .map(|(k, e)| (k.clone(), (e.lower_kw, e.upper_kw)))
        .collect()
}

/// A limit order on one bound of a customer's envelope.
#[pyclass(module = "seculex", frozen, from_py_object)]
#[derive(Clone)]
struct Order {
    inner: seculex::Order,
}

#[pymethods]
impl Order {
    #[new]
    #[pyo3(signature = (id, customer, side, bound, delta_kw, price_eur_per_kw, product_time = "12:00".to_string()))]
    fn new(
        id: u64,
        customer: String,
        side: &str,
        bound: &str,
        delta_kw: f64,
        price_eur_per_kw: f64,
        product_time: String,
    ) -> PyResult<Self> {
        let side = match side {
            "buy" => Side::Buy,
            "sell" => Side::Sell,
            other => return Err(PyValueError::new_err(format!("side must be 'buy' or 'sell', not {other:?}"))),
        };
        let bound = match bound {
            "lower" => BoundSide::Lower,
            "upper" => BoundSide::Upper,
            other => return Err(PyValueError::new_err(format!("bound must be 'lower' or 'upper', not {other:?}"))),
        };
        Ok(Order {
            inner: seculex::Order {
                id,
                customer,
                side,
                bound,
                power: PowerKind::Active,
                delta_kw,
                price_eur_per_kw,
                product_time,
            },
        })
    }

    #[getter]
    fn id(&self) -> u64 {
        self.inner.id
    }

    #[getter]
    fn customer(&self) -> &str {
        &self.inner.customer
    }

    fn __repr__(&self) -> String {
        let o = &self.inner;
        format!(
            "Order(id={}, customer={:?}, side={:?}, bound={:?}, delta_kw={}, price_eur_per_kw={})",
            o.id,
            o.customer,
            format!("{:?}", o.side).to_lowercase(),
            format!("{:?}", o.bound).to_lowercase(),
            o.delta_kw,
            o.price_eur_per_kw
        )
    }
}

/// Validated radial network.
#[pyclass(module = "seculex", frozen)]
struct Network {
    inner: seculex::Network,
}

#[pymethods]
impl Network {
    #[new]
    #[pyo3(signature = (nodes, lines, root, customers))]
    fn new(nodes: Vec<String>, lines: Vec<(String, String, f64)>, root: String, customers: Vec<String>) -> PyResult<Self> {
        let spec = NetworkSpec {
            nodes,
            lines: lines
                .into_iter()
                .map(|(a, b, limit)| Line::new(a, b, limit))
                .collect(),
            root,
            customers,
            voltage_bounds: None,
        };
        Ok(Network {
            inner: validate_radial(&spec).map_err(err)?,
        })
    }

    #[getter]
    fn customers(&self) -> Vec<String> {
        self.inner.customer_names().map(String::from).collect()
    }

    /// Line flows in kW keyed by "(from,to)", oriented away from the root.
    fn flows(&self, profile: BTreeMap<String, f64>) -> PyResult<BTreeMap<String, f64>> {
        let flows = seculex::dc_power_flow(&self.inner, &PowerProfile(profile)).map_err(err)?;
        Ok(self
            .inner
            .edge_ids()
            .map(|e| (self.inner.edge_label(e), flows.flow(e)))
            .collect())
    }

    fn is_secure(&self, profile: BTreeMap<String, f64>) -> PyResult<bool> {
        Ok(seculex::check_profile_security(&self.inner, &PowerProfile(profile))
            .map_err(err)?
            .is_secure())
    }

    /// Worst line margin over the envelope corners; `<= 0` means secure.
    fn verify_limits(&self, limits: BTreeMap<String, (f64, f64)>) -> PyResult<f64> {
        verify_limits(&self.inner, &to_doe(limits)).map_err(err)
    }

    #[pyo3(signature = (limits, samples = 1000, seed = 0))]
    fn verify_oracle<'py>(
        &self,
        py: Python<'py>,
        limits: BTreeMap<String, (f64, f64)>,
        samples: usize,
        seed: u64,
    ) -> PyResult<Bound<'py, PyDict>> {
        let r = verify_limits_oracle(&self.inner, &to_doe(limits), samples, seed).map_err(err)?;
        let d = PyDict::new(py);
        d.set_item("secure", r.secure)?;
        d.set_item("corners_enumerated", r.corners_enumerated)?;
        d.set_item("profiles_checked", r.profiles_checked)?;
        d.set_item("worst_margin_kw", r.worst_margin_kw)?;
        Ok(d)
    }

    /// Fair envelopes from `{customer: (contract_lower, guaranteed_lower,
    /// guaranteed_upper, contract_upper)}`; returns `(limits, widths)`.
    fn allocate(
        &self,
        bounds: BTreeMap<String, (f64, f64, f64, f64)>,
    ) -> PyResult<(BTreeMap<String, (f64, f64)>, Vec<f64>)> {
        let bounds = bounds
            .into_iter()
            .map(|(k, (a, b, c, d))| (k, AllocationBounds::new(a, b, c, d)))
            .collect();
        let result = allocate_does(&self.inner, &bounds).map_err(allocation_err)?;
        Ok((
            from_doe(&result.doe),
            result.iterations.iter().map(|i| i.width_kw).collect(),
        ))
    }

    /// Clears `orders` against `limits`.
    #[pyo3(signature = (limits, orders, product_time = "12:00".to_string()))]
    fn clear<'py>(
        &self,
        py: Python<'py>,
        limits: BTreeMap<String, (f64, f64)>,
        orders: Vec<Order>,
        product_time: String,
    ) -> PyResult<Bound<'py, PyDict>> {
        let mut book = OrderBook::new(product_time);
        for o in orders {
            book.submit(o.inner).map_err(err)?;
        }
        let out = clear(&self.inner, &to_doe(limits), &book).map_err(err)?;
        let d = PyDict::new(py);
        d.set_item("acceptances", &out.acceptances)?;
        d.set_item("limits", from_doe(&out.updated_limits))?;
        let remaining: BTreeMap<u64, f64> = out
            .updated_book
            .entries()
            .map(|e| (e.order.id, e.remaining_kw))
            .collect();
        d.set_item("remaining", remaining)?;
        let payments: BTreeMap<String, f64> = out
            .payments()
            .iter()
            .map(|(k, m)| (k.clone(), m.to_eur()))
            .collect();
        d.set_item("payments_eur", payments)?;
        d.set_item("social_welfare_eur", out.social_welfare().to_eur())?;
        Ok(d)
    }
}

/// A parsed and validated scenario file.
#[pyclass(module = "seculex", frozen)]
struct Scenario {
    inner: seculex::Scenario,
}

fn report_dict<'py>(py: Python<'py>, r: &SchemeReport) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("scheme", r.scheme.label())?;
    d.set_item("total_curtailment_kw", r.total_curtailment_kw)?;
    d.set_item("renewable_utilization_pct", r.renewable_utilization_pct)?;
    d.set_item("security_violation", r.security_violation)?;
    d.set_item("opportunity_loss_eur", r.opportunity_loss.to_eur())?;
    d.set_item("market_social_welfare_eur", r.market_social_welfare.map(|m| m.to_eur()))?;
    let rows = PyList::empty(py);
    for c in &r.rows {
        let row = PyDict::new(py);
        row.set_item("customer", &c.customer)?;
        row.set_item("final_net_kw", c.final_net_kw)?;
        row.set_item("curtailed_kw", c.curtailed_kw())?;
        row.set_item("battery_kw", c.battery_kw)?;
        rows.append(row)?;
    }
    d.set_item("customers", rows)?;
    Ok(d)
}

#[pymethods]
impl Scenario {
    #[staticmethod]
    #[pyo3(signature = (text, lenient = false))]
    fn from_json(text: &str, lenient: bool) -> PyResult<Self> {
        let strictness = if lenient {
            Strictness::Lenient
        } else {
            Strictness::Strict
        };
        let (inner, _) = load_scenario(text, strictness).map_err(err)?;
        Ok(Scenario { inner })
    }

    #[staticmethod]
    #[pyo3(signature = (path, lenient = false))]
    fn load(path: std::path::PathBuf, lenient: bool) -> PyResult<Self> {
        let text = std::fs::read_to_string(&path).map_err(|e| err(format!("{}: {e}", path.display())))?;
        Self::from_json(&text, lenient)
    }

    fn to_json(&self) -> String {
        self.inner.file.to_json()
    }

    #[getter]
    fn name(&self) -> &str {
        &self.inner.file.name
    }

    #[getter]
    fn network(&self) -> Network {
        Network {
            inner: self.inner.network.clone(),
        }
    }

    #[getter]
    fn orders(&self) -> Vec<Order> {
        self.inner
            .file
            .orders
            .iter()
            .map(|o| Order { inner: o.clone() })
            .collect()
    }

    /// Fair initial envelopes and the width reached in each round.
    fn allocate(&self) -> PyResult<(BTreeMap<String, (f64, f64)>, Vec<f64>)> {
        let result = allocate_does(&self.inner.network, &self.inner.bounds()).map_err(allocation_err)?;
        Ok((
            from_doe(&result.doe),
            result.iterations.iter().map(|i| i.width_kw).collect(),
        ))
    }

    /// Runs the scripted market session: submit and clear each order in
    /// turn, then close the book.
    fn market_session<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let s = seculex::sim::run_market_session(&self.inner).map_err(err)?;
        let d = PyDict::new(py);
        d.set_item("initial_limits", from_doe(&s.initial_limits))?;
        d.set_item("limits", from_doe(&s.final_limits))?;
        d.set_item("acceptances", &s.acceptances)?;
        let payments: BTreeMap<String, f64> = s.payments.iter().map(|(k, m)| (k.clone(), m.to_eur())).collect();
        d.set_item("payments_eur", payments)?;
        d.set_item("social_welfare_eur", s.social_welfare.to_eur())?;
        Ok(d)
    }

    /// One report per management scheme.
    fn compare<'py>(&self, py: Python<'py>) -> PyResult<Vec<Bound<'py, PyDict>>> {
        let reports = seculex::compare(&self.inner).map_err(err)?;
        reports.iter().map(|r| report_dict(py, r)).collect()
    }
}

#[pymodule]
#[pyo3(name = "seculex")]
fn seculex_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Network>()?;
    m.add_class::<Order>()?;
    m.add_class::<Scenario>()?;
    m.add("SecuLexError", m.py().get_type::<SecuLexError>())?;
    m.add("InfeasibleError", m.py().get_type::<InfeasibleError>())?;
    Ok(())
}
