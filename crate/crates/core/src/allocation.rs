//! Fair initial envelope allocation by iterated max-min.
//!
//! Each round maximizes the smallest width among customers that are still
//! free, subject to corner security on every line and each customer's
//! guaranteed/contractual box. Customers that cannot grow past the round's
//! optimum are frozen at their current envelope and the next round runs on
//! the rest.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::envelopes::{DoeMatrix, Envelope};
use crate::lp::{LinearProgram, LpError, LpStatus, Relation, VarId};
use crate::network::{EdgeId, Network};

/// Width tolerance used to decide which customers are tight.
pub const WIDTH_TOL: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AllocationError {
    #[error("no allocation bounds for customer {0}")]
    MissingBounds(String),
    #[error("allocation bounds of {0} are inconsistent")]
    InvalidBounds(String),
    #[error("guaranteed envelopes cannot be made secure: {corner} corner on line {line} exceeds its limit by {excess_kw} kW")]
    InfeasibleGuarantees {
        corner: &'static str,
        line: String,
        excess_kw: f64,
    },
    #[error("allocation program could not be solved: {0}")]
    Solver(String),
}

impl From<LpError> for AllocationError {
    fn from(e: LpError) -> Self {
        AllocationError::Solver(e.to_string())
    }
}

/// Per-customer limits on how the envelope may be placed:
/// `contract_lower <= lower <= guaranteed_lower` and
/// `guaranteed_upper <= upper <= contract_upper`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AllocationBounds {
    pub contract_lower_kw: f64,
    pub guaranteed_lower_kw: f64,
    pub guaranteed_upper_kw: f64,
    pub contract_upper_kw: f64,
}

impl AllocationBounds {
    pub fn new(contract_lower: f64, guaranteed_lower: f64, guaranteed_upper: f64, contract_upper: f64) -> Self {
        AllocationBounds {
            contract_lower_kw: contract_lower,
            guaranteed_lower_kw: guaranteed_lower,
            guaranteed_upper_kw: guaranteed_upper,
            contract_upper_kw: contract_upper,
        }
    }

    pub fn is_valid(&self) -> bool {
        let all = [
            self.contract_lower_kw,
            self.guaranteed_lower_kw,
            self.guaranteed_upper_kw,
            self.contract_upper_kw,
        ];
        !all.iter().any(|x| x.is_nan())
            && self.guaranteed_lower_kw.is_finite()
            && self.guaranteed_upper_kw.is_finite()
            && self.contract_lower_kw <= self.guaranteed_lower_kw
            && self.guaranteed_lower_kw <= self.guaranteed_upper_kw
            && self.guaranteed_upper_kw <= self.contract_upper_kw
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AllocationIteration {
    /// Customers frozen at the end of this round.
    pub fixed: Vec<String>,
    pub width_kw: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AllocationResult {
    pub doe: DoeMatrix,
    pub iterations: Vec<AllocationIteration>,
}

/// Outcome of one max-min round.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationSolution {
    pub width_kw: f64,
    pub doe: DoeMatrix,
    /// Free customers that cannot exceed `width_kw` in any optimal solution.
    pub blocked: Vec<String>,
}

struct IterationModel {
    lp: LinearProgram,
    width: Option<VarId>,
    lower: Vec<VarId>,
    upper: Vec<VarId>,
    free: Vec<usize>,
}

fn check_bounds(
    network: &Network,
    bounds: &BTreeMap<String, AllocationBounds>,
) -> Result<Vec<AllocationBounds>, AllocationError> {
    network
        .customer_names()
        .map(|name| {
            let b = bounds
                .get(name)
                .ok_or_else(|| AllocationError::MissingBounds(name.to_string()))?;
            if !b.is_valid() {
                return Err(AllocationError::InvalidBounds(name.to_string()));
            }
            Ok(*b)
        })
        .collect()
}

fn build_model(
    network: &Network,
    bounds: &[AllocationBounds],
    fixed: &BTreeMap<String, Envelope>,
    width_floor: Option<f64>,
) -> IterationModel {
    let mut lp = LinearProgram::new();
    let names: Vec<&str> = network.customer_names().collect();
    let mut lower = Vec::with_capacity(names.len());
    let mut upper = Vec::with_capacity(names.len());
    let mut free = Vec::new();
    for (pos, name) in names.iter().enumerate() {
        match fixed.get(*name) {
            Some(env) => {
                lower.push(lp.add_var(format!("lo_{name}"), env.lower_kw, env.lower_kw));
                upper.push(lp.add_var(format!("up_{name}"), env.upper_kw, env.upper_kw));
            }
            None => {
                let b = &bounds[pos];
                lower.push(lp.add_var(
                    format!("lo_{name}"),
                    b.contract_lower_kw,
                    b.guaranteed_lower_kw,
                ));
                upper.push(lp.add_var(
                    format!("up_{name}"),
                    b.guaranteed_upper_kw,
                    b.contract_upper_kw,
                ));
                free.push(pos);
            }
        }
    }
    let width = (!free.is_empty())
        .then(|| lp.add_var("w", width_floor.unwrap_or(0.0), f64::INFINITY));

    for edge in network.edge_ids() {
        let below = network.downstream_customers(edge);
        if below.is_empty() {
            continue;
        }
        let limit = network.line(edge).limit_kw;
        let label = network.edge_label(edge);
        for (corner, vars) in [("lower", &lower), ("upper", &upper)] {
            let terms: Vec<_> = below.iter().map(|&p| (vars[p], 1.0)).collect();
            lp.add_constraint(
                format!("{corner}_max{label}"),
                terms.iter().copied(),
                Relation::Le,
                limit,
            );
            lp.add_constraint(format!("{corner}_min{label}"), terms, Relation::Ge, -limit);
        }
    }
    if let Some(w) = width {
        for &pos in &free {
            lp.add_constraint(
                format!("width_{}", names[pos]),
                [(w, 1.0), (upper[pos], -1.0), (lower[pos], 1.0)],
                Relation::Le,
                0.0,
            );
        }
    }
    for (pos, name) in names.iter().enumerate() {
        lp.add_constraint(
            format!("order_{name}"),
            [(lower[pos], 1.0), (upper[pos], -1.0)],
            Relation::Le,
            0.0,
        );
    }
    IterationModel {
        lp,
        width,
        lower,
        upper,
        free,
    }
}

/// The program solved by one round, for inspection.
pub fn iteration_program(
    network: &Network,
    bounds: &BTreeMap<String, AllocationBounds>,
    fixed: &BTreeMap<String, Envelope>,
) -> Result<LinearProgram, AllocationError> {
    let bounds = check_bounds(network, bounds)?;
    let mut model = build_model(network, &bounds, fixed, None);
    if let Some(w) = model.width {
        model.lp.set_objective([(w, 1.0)]);
    }
    Ok(model.lp)
}

fn infeasibility_report(network: &Network, bounds: &[AllocationBounds], fixed: &BTreeMap<String, Envelope>) -> AllocationError {
    let (mut lower, mut upper) = (Vec::new(), Vec::new());
    for (pos, name) in network.customer_names().enumerate() {
        match fixed.get(name) {
            Some(env) => {
                lower.push(env.lower_kw);
                upper.push(env.upper_kw);
            }
            None => {
                lower.push(bounds[pos].guaranteed_lower_kw);
                upper.push(bounds[pos].guaranteed_upper_kw);
            }
        }
    }
    let (ml, el) = network.worst_margin(&network.flows_dense(&lower));
    let (mu, eu) = network.worst_margin(&network.flows_dense(&upper));
    let (corner, margin, edge) = if ml >= mu {
        ("lower", ml, el)
    } else {
        ("upper", mu, eu)
    };
    AllocationError::InfeasibleGuarantees {
        corner,
        line: edge.map_or_else(|| "-".to_string(), |e: EdgeId| network.edge_label(e)),
        excess_kw: margin,
    }
}

/// One max-min round over the customers not in `fixed`.
pub fn lex_iteration(
    network: &Network,
    bounds: &BTreeMap<String, AllocationBounds>,
    fixed: &BTreeMap<String, Envelope>,
) -> Result<IterationSolution, AllocationError> {
    let bounds = check_bounds(network, bounds)?;
    lex_iteration_checked(network, &bounds, fixed)
}

fn lex_iteration_checked(
    network: &Network,
    bounds: &[AllocationBounds],
    fixed: &BTreeMap<String, Envelope>,
) -> Result<IterationSolution, AllocationError> {
    let names: Vec<&str> = network.customer_names().collect();
    let mut model = build_model(network, bounds, fixed, None);
    let Some(w) = model.width else {
        // Nothing left to enlarge.
        let doe = DoeMatrix(
            fixed
                .iter()
                .map(|(k, v)| (k.clone(), *v))
                .collect(),
        );
        return Ok(IterationSolution {
            width_kw: f64::INFINITY,
            doe,
            blocked: Vec::new(),
        });
    };
    model.lp.set_objective([(w, 1.0)]);
    let sol = model.lp.solve()?;
    match sol.status {
        LpStatus::Optimal => {}
        LpStatus::Infeasible => return Err(infeasibility_report(network, bounds, fixed)),
        LpStatus::Unbounded => {
            return Err(AllocationError::Solver(
                "envelope width is unbounded".to_string(),
            ))
        }
    }
    let width_kw = sol.value(w);

    let mut doe = DoeMatrix::new();
    for (pos, name) in names.iter().enumerate() {
        doe.insert(
            *name,
            Envelope::new(sol.value(model.lower[pos]), sol.value(model.upper[pos])),
        );
    }

    // A tight customer is blocked only if no optimal solution gives it more
    // than `width_kw`; the vertex returned above may be tight by accident.
    let tight: Vec<usize> = model
        .free
        .iter()
        .copied()
        .filter(|&p| {
            sol.value(model.upper[p]) - sol.value(model.lower[p]) <= width_kw + WIDTH_TOL
        })
        .collect();
    let mut blocked = Vec::new();
    let probe = build_model(network, bounds, fixed, Some(width_kw - 1e-9));
    for &p in &tight {
        let mut lp = probe.lp.clone();
        lp.set_objective([(probe.upper[p], 1.0), (probe.lower[p], -1.0)]);
        let best = lp.solve()?;
        let can_grow = best.is_optimal() && best.objective_value > width_kw + WIDTH_TOL;
        if !can_grow {
            blocked.push(names[p].to_string());
        }
    }
    if blocked.is_empty() {
        blocked = tight.iter().map(|&p| names[p].to_string()).collect();
    }

    // The round's optimum rarely pins where a blocked envelope sits. Among
    // optimal solutions, pick the one whose blocked envelopes are closest
    // to centred on zero.
    for floor in [width_kw, width_kw - 1e-9] {
        if let Some(centred) = centred_envelopes(network, bounds, fixed, floor, &blocked)? {
            doe = centred;
            break;
        }
    }

    Ok(IterationSolution {
        width_kw,
        doe,
        blocked,
    })
}

fn centred_envelopes(
    network: &Network,
    bounds: &[AllocationBounds],
    fixed: &BTreeMap<String, Envelope>,
    floor_kw: f64,
    blocked: &[String],
) -> Result<Option<DoeMatrix>, AllocationError> {
    let mut centre = build_model(network, bounds, fixed, Some(floor_kw));
    let mut objective = Vec::new();
    for name in blocked {
        let p = network.customer_position(name).expect("customer");
        let d = centre.lp.add_var(format!("skew_{name}"), 0.0, f64::INFINITY);
        let (lo, up) = (centre.lower[p], centre.upper[p]);
        centre
            .lp
            .add_constraint(format!("skew_pos_{name}"), [(d, 1.0), (lo, -1.0), (up, -1.0)], Relation::Ge, 0.0);
        centre
            .lp
            .add_constraint(format!("skew_neg_{name}"), [(d, 1.0), (lo, 1.0), (up, 1.0)], Relation::Ge, 0.0);
        objective.push((d, -1.0));
    }
    centre.lp.set_objective(objective);
    let centred = centre.lp.solve()?;
    if !centred.is_optimal() {
        return Ok(None);
    }
    Ok(Some(DoeMatrix(
        network
            .customer_names()
            .enumerate()
            .map(|(pos, name)| {
                (
                    name.to_string(),
                    Envelope::new(centred.value(centre.lower[pos]), centred.value(centre.upper[pos])),
                )
            })
            .collect(),
    )))
}

/// Runs max-min rounds until every customer has a frozen envelope.
pub fn allocate_does(
    network: &Network,
    bounds: &BTreeMap<String, AllocationBounds>,
) -> Result<AllocationResult, AllocationError> {
    let checked = check_bounds(network, bounds)?;
    let total = network.customers().len();
    let mut fixed: BTreeMap<String, Envelope> = BTreeMap::new();
    let mut iterations = Vec::new();
    while fixed.len() < total {
        let round = lex_iteration_checked(network, &checked, &fixed)?;
        for name in &round.blocked {
            fixed.insert(name.clone(), *round.doe.get(name).expect("customer in round"));
        }
        iterations.push(AllocationIteration {
            fixed: round.blocked,
            width_kw: round.width_kw,
        });
    }
    Ok(AllocationResult {
        doe: DoeMatrix(fixed),
        iterations,
    })
}
