//! Random instance generators and brute-force reference solvers used by
//! the property suites. Enabled with the `testkit` feature.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::allocation::AllocationBounds;
use crate::envelopes::{DoeMatrix, Envelope};
use crate::lp::{LinearProgram, Relation};
use crate::market::{BoundSide, Order, PowerKind, Side};
use crate::network::{validate_radial, Line, Network, NetworkSpec};

pub const PRODUCT_TIME: &str = "12:00";

/// Random tree on `2..=max_nodes` nodes rooted at `N0`. Lines are listed
/// in random order with random orientation; every non-root node is a
/// customer with probability 0.7 (at least one customer overall).
pub fn random_tree_spec<R: Rng>(rng: &mut R, max_nodes: usize) -> NetworkSpec {
    let n = rng.gen_range(2..=max_nodes.max(2));
    let nodes: Vec<String> = (0..n).map(|i| format!("N{i}")).collect();
    let mut lines: Vec<Line> = (1..n)
        .map(|i| {
            let parent = rng.gen_range(0..i);
            let limit = rng.gen_range(5..=60) as f64;
            if rng.gen_bool(0.5) {
                Line::new(nodes[parent].clone(), nodes[i].clone(), limit)
            } else {
                Line::new(nodes[i].clone(), nodes[parent].clone(), limit)
            }
        })
        .collect();
    lines.shuffle(rng);
    let mut customers: Vec<String> = nodes[1..]
        .iter()
        .filter(|_| rng.gen_bool(0.7))
        .cloned()
        .collect();
    if customers.is_empty() {
        customers.push(nodes[rng.gen_range(1..n)].clone());
    }
    NetworkSpec {
        nodes,
        lines,
        root: "N0".into(),
        customers,
        voltage_bounds: None,
    }
}

pub fn random_tree<R: Rng>(rng: &mut R, max_nodes: usize) -> Network {
    validate_radial(&random_tree_spec(rng, max_nodes)).expect("generated tree is radial")
}

/// Random envelopes. About a third of the draws are rescaled so that the
/// box touches a line limit exactly, to exercise the security boundary.
pub fn random_envelopes<R: Rng>(rng: &mut R, network: &Network) -> DoeMatrix {
    let n = network.customers().len();
    let mut lower: Vec<f64> = (0..n).map(|_| -rng.gen_range(0.0..40.0)).collect();
    let mut upper: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..40.0)).collect();
    if rng.gen_bool(0.1) {
        let k = rng.gen_range(0..n);
        upper[k] = lower[k];
    }
    if rng.gen_bool(0.35) {
        let fl = network.flows_dense(&lower);
        let fu = network.flows_dense(&upper);
        let mut scale = f64::INFINITY;
        for e in network.edge_ids() {
            let peak = fl[e.0].abs().max(fu[e.0].abs());
            if peak > 0.0 {
                scale = scale.min(network.line(e).limit_kw / peak);
            }
        }
        if scale.is_finite() {
            lower.iter_mut().for_each(|x| *x *= scale);
            upper.iter_mut().for_each(|x| *x *= scale);
        }
    }
    DoeMatrix(
        network
            .customer_names()
            .zip(lower.into_iter().zip(upper))
            .map(|(name, (lo, up))| (name.to_string(), Envelope::new(lo, up)))
            .collect(),
    )
}

pub fn random_profile<R: Rng>(rng: &mut R, network: &Network) -> Vec<f64> {
    (0..network.customers().len())
        .map(|_| rng.gen_range(-40.0..40.0))
        .collect()
}

/// Integer-valued allocation bounds in `[-span, span]`.
pub fn random_integer_bounds<R: Rng>(
    rng: &mut R,
    network: &Network,
    span: i32,
) -> BTreeMap<String, AllocationBounds> {
    network
        .customer_names()
        .map(|name| {
            let cl = rng.gen_range(-span..=0);
            let gl = rng.gen_range(cl..=0);
            let gu = rng.gen_range(0..=span);
            let cu = rng.gen_range(gu..=span);
            (
                name.to_string(),
                AllocationBounds::new(cl as f64, gl as f64, gu as f64, cu as f64),
            )
        })
        .collect()
}

/// Star-like tree with exactly three customers and small integer limits.
pub fn random_three_customer_tree<R: Rng>(rng: &mut R) -> Network {
    loop {
        let mut spec = random_tree_spec(rng, 5);
        let candidates: Vec<String> = spec.nodes[1..].to_vec();
        if candidates.len() < 3 {
            continue;
        }
        spec.customers = candidates
            .choose_multiple(rng, 3)
            .cloned()
            .collect();
        for line in &mut spec.lines {
            line.limit_kw = rng.gen_range(1..=8) as f64;
        }
        return validate_radial(&spec).expect("generated tree is radial");
    }
}

/// Random integer-quantity, cent-priced orders from the network's
/// customers, ids starting at `first_id`.
pub fn random_orders<R: Rng>(rng: &mut R, network: &Network, count: usize, first_id: u64) -> Vec<Order> {
    let names: Vec<&str> = network.customer_names().collect();
    (0..count)
        .map(|k| Order {
            id: first_id + k as u64,
            customer: names[rng.gen_range(0..names.len())].to_string(),
            side: if rng.gen_bool(0.5) { Side::Buy } else { Side::Sell },
            bound: if rng.gen_bool(0.5) {
                BoundSide::Lower
            } else {
                BoundSide::Upper
            },
            power: PowerKind::Active,
            delta_kw: rng.gen_range(1..=8) as f64,
            price_eur_per_kw: rng.gen_range(1..=10) as f64 / 100.0,
            product_time: PRODUCT_TIME.to_string(),
        })
        .collect()
}

/// Random LP with up to `max_vars` boxed variables and a few dense rows,
/// all data small integers.
pub fn random_boxed_lp<R: Rng>(rng: &mut R, max_vars: usize) -> LinearProgram {
    let n = rng.gen_range(1..=max_vars);
    let mut lp = LinearProgram::new();
    let vars: Vec<_> = (0..n)
        .map(|i| {
            let lo = rng.gen_range(-5..=2) as f64;
            let hi = lo + rng.gen_range(0..=8) as f64;
            lp.add_var(format!("x{i}"), lo, hi)
        })
        .collect();
    lp.set_objective(vars.iter().map(|&v| (v, rng.gen_range(-5..=5) as f64)));
    for r in 0..rng.gen_range(0..=4) {
        let terms: Vec<_> = vars.iter().map(|&v| (v, rng.gen_range(-4..=4) as f64)).collect();
        let relation = match rng.gen_range(0..6) {
            0 => Relation::Eq,
            1 | 2 => Relation::Ge,
            _ => Relation::Le,
        };
        lp.add_constraint(format!("r{r}"), terms, relation, rng.gen_range(-10..=10) as f64);
    }
    lp
}

/// Solves `a x = b` by Gaussian elimination with partial pivoting.
/// Returns `None` for (numerically) singular systems.
pub fn solve_dense(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() < 1e-12 {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            if f != 0.0 {
                for k in col..n {
                    a[row][k] -= f * a[col][k];
                }
                b[row] -= f * b[col];
            }
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    Some(x)
}

/// Best objective over all basic feasible points of a program whose
/// variables are all boxed, or `None` if no vertex is feasible.
pub fn lp_vertex_brute_force(lp: &LinearProgram) -> Option<f64> {
    let n = lp.num_vars();
    // Every bound and row as `coefs . x  rel  rhs`.
    let mut rows: Vec<(Vec<f64>, Relation, f64)> = Vec::new();
    for (i, v) in lp.variables().iter().enumerate() {
        let mut e = vec![0.0; n];
        e[i] = 1.0;
        rows.push((e.clone(), Relation::Ge, v.lower));
        rows.push((e, Relation::Le, v.upper));
    }
    for c in lp.constraints() {
        let mut coefs = vec![0.0; n];
        for &(v, a) in &c.terms {
            coefs[v.index()] += a;
        }
        rows.push((coefs, c.relation, c.rhs));
    }
    let feasible = |x: &[f64]| {
        rows.iter().all(|(a, rel, b)| {
            let lhs: f64 = a.iter().zip(x).map(|(a, x)| a * x).sum();
            let tol = 1e-7 * b.abs().max(1.0);
            match rel {
                Relation::Le => lhs <= b + tol,
                Relation::Ge => lhs >= b - tol,
                Relation::Eq => (lhs - b).abs() <= tol,
            }
        })
    };
    let mut best: Option<f64> = None;
    let mut pick = Vec::with_capacity(n);
    subsets(rows.len(), n, &mut pick, &mut |idx| {
        let a = idx.iter().map(|&i| rows[i].0.clone()).collect();
        let b = idx.iter().map(|&i| rows[i].2).collect();
        if let Some(x) = solve_dense(a, b) {
            if feasible(&x) {
                let z = lp.objective_at(&x);
                best = Some(best.map_or(z, |b: f64| b.max(z)));
            }
        }
    });
    best
}

fn subsets(total: usize, k: usize, pick: &mut Vec<usize>, f: &mut impl FnMut(&[usize])) {
    if pick.len() == k {
        f(pick);
        return;
    }
    let start = pick.last().map_or(0, |&l| l + 1);
    for i in start..total {
        if total - i < k - pick.len() {
            break;
        }
        pick.push(i);
        subsets(total, k, pick, f);
        pick.pop();
    }
}

/// Ascending width vector of an envelope matrix.
pub fn sorted_widths(doe: &DoeMatrix) -> Vec<f64> {
    let mut w: Vec<f64> = doe.iter().map(|(_, e)| e.width_kw()).collect();
    w.sort_by(f64::total_cmp);
    w
}

/// Lexicographically largest ascending width vector over every secure
/// envelope matrix with integer bounds inside `bounds`, or `None` if no
/// grid matrix is secure.
pub fn lex_grid_brute_force(network: &Network, bounds: &BTreeMap<String, AllocationBounds>) -> Option<Vec<f64>> {
    let names: Vec<&str> = network.customer_names().collect();
    let choices: Vec<Vec<(f64, f64)>> = names
        .iter()
        .map(|n| {
            let b = &bounds[*n];
            let mut v = Vec::new();
            let mut lo = b.contract_lower_kw;
            while lo <= b.guaranteed_lower_kw {
                let mut up = b.guaranteed_upper_kw;
                while up <= b.contract_upper_kw {
                    v.push((lo, up));
                    up += 1.0;
                }
                lo += 1.0;
            }
            v
        })
        .collect();
    let mut best: Option<Vec<f64>> = None;
    let mut idx = vec![0usize; names.len()];
    let mut lower = vec![0.0; names.len()];
    let mut upper = vec![0.0; names.len()];
    'outer: loop {
        for (p, &i) in idx.iter().enumerate() {
            (lower[p], upper[p]) = choices[p][i];
        }
        let secure = [&lower, &upper]
            .iter()
            .all(|corner| network.worst_margin(&network.flows_dense(corner)).0 <= 1e-9);
        if secure {
            let mut w: Vec<f64> = lower.iter().zip(&upper).map(|(l, u)| u - l).collect();
            w.sort_by(f64::total_cmp);
            if best.as_ref().map_or(true, |b| lex_greater(&w, b, 0.0)) {
                best = Some(w);
            }
        }
        for p in 0..idx.len() {
            idx[p] += 1;
            if idx[p] < choices[p].len() {
                continue 'outer;
            }
            idx[p] = 0;
        }
        break;
    }
    best
}

/// True when `a` is lexicographically greater than `b` by more than `tol`
/// at the first position where they differ by more than `tol`.
pub fn lex_greater(a: &[f64], b: &[f64], tol: f64) -> bool {
    for (x, y) in a.iter().zip(b) {
        if x - y > tol {
            return true;
        }
        if y - x > tol {
            return false;
        }
    }
    false
}

/// Best welfare over integer acceptance vectors that keep the limits
/// ordered and secure.
pub fn market_integer_brute_force(network: &Network, doe: &DoeMatrix, orders: &[Order]) -> f64 {
    let mut best = 0.0_f64;
    let mut a = vec![0usize; orders.len()];
    'outer: loop {
        let mut limits = doe.clone();
        let mut welfare = 0.0;
        for (o, &q) in orders.iter().zip(&a) {
            let q = q as f64;
            let env = limits.0.get_mut(&o.customer).expect("customer");
            match o.bound {
                BoundSide::Lower => env.lower_kw += o.limit_shift() * q,
                BoundSide::Upper => env.upper_kw += o.limit_shift() * q,
            }
            welfare += o.welfare_coefficient() * q;
        }
        if welfare > best
            && limits.iter().all(|(_, e)| e.lower_kw <= e.upper_kw + 1e-9)
            && crate::envelopes::verify_limits(network, &limits).expect("complete limits") <= 1e-9
        {
            best = welfare;
        }
        for (k, o) in orders.iter().enumerate() {
            a[k] += 1;
            if a[k] as f64 <= o.delta_kw {
                continue 'outer;
            }
            a[k] = 0;
        }
        break;
    }
    best
}
