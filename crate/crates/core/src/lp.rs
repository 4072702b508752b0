//! Small dense linear-programming kernel.
//!
//! Programs are stated as maximization over box-bounded variables with
//! linear `<=`, `=` and `>=` rows. They are lowered to standard form and
//! solved by a two-phase primal simplex on a dense tableau using Bland's
//! rule, so the same program always produces the same vertex.

use std::fmt::{self, Write as _};

use thiserror::Error;

/// Pivot elements smaller than this are treated as zero.
pub const PIVOT_TOL: f64 = 1e-10;
/// Feasibility and optimality tolerance.
pub const FEAS_TOL: f64 = 1e-9;

const MAX_PIVOTS: usize = 1_000_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LpError {
    #[error("malformed program: {0}")]
    Malformed(String),
    #[error("simplex exceeded {0} pivots")]
    IterationLimit(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct VarId(usize);

impl VarId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Relation {
    Le,
    Eq,
    Ge,
}

impl fmt::Display for Relation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Relation::Le => "<=",
            Relation::Eq => "=",
            Relation::Ge => ">=",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Variable {
    pub name: String,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Constraint {
    pub name: String,
    pub terms: Vec<(VarId, f64)>,
    pub relation: Relation,
    pub rhs: f64,
}

/// `maximize c'x` subject to linear rows and variable bounds.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LinearProgram {
    variables: Vec<Variable>,
    objective: Vec<(VarId, f64)>,
    constraints: Vec<Constraint>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub status: LpStatus,
    /// One value per declared variable; empty unless `status` is `Optimal`.
    pub values: Vec<f64>,
    pub objective_value: f64,
}

impl LpSolution {
    pub fn is_optimal(&self) -> bool {
        self.status == LpStatus::Optimal
    }

    pub fn value(&self, var: VarId) -> f64 {
        self.values[var.0]
    }
}

impl LinearProgram {
    pub fn new() -> Self {
        Self::default()
    }

    /// Declares a variable. Use `f64::NEG_INFINITY` / `f64::INFINITY` for
    /// missing bounds.
    pub fn add_var(&mut self, name: impl Into<String>, lower: f64, upper: f64) -> VarId {
        self.variables.push(Variable {
            name: name.into(),
            lower,
            upper,
        });
        VarId(self.variables.len() - 1)
    }

    /// Adds `coef` to the objective coefficient of `var`.
    pub fn add_objective(&mut self, var: VarId, coef: f64) {
        self.objective.push((var, coef));
    }

    pub fn set_objective(&mut self, terms: impl IntoIterator<Item = (VarId, f64)>) {
        self.objective = terms.into_iter().collect();
    }

    pub fn add_constraint(
        &mut self,
        name: impl Into<String>,
        terms: impl IntoIterator<Item = (VarId, f64)>,
        relation: Relation,
        rhs: f64,
    ) {
        self.constraints.push(Constraint {
            name: name.into(),
            terms: terms.into_iter().collect(),
            relation,
            rhs,
        });
    }

    pub fn variables(&self) -> &[Variable] {
        &self.variables
    }

    pub fn constraints(&self) -> &[Constraint] {
        &self.constraints
    }

    pub fn objective(&self) -> &[(VarId, f64)] {
        &self.objective
    }

    pub fn num_vars(&self) -> usize {
        self.variables.len()
    }

    pub fn objective_at(&self, values: &[f64]) -> f64 {
        self.objective.iter().map(|&(v, c)| c * values[v.0]).sum()
    }

    /// Largest scaled violation of any bound or row at `values`; each
    /// violation is divided by `max(1, |rhs|)`.
    pub fn max_violation(&self, values: &[f64]) -> f64 {
        let mut worst = 0.0_f64;
        for (var, &x) in self.variables.iter().zip(values) {
            if var.lower.is_finite() {
                worst = worst.max((var.lower - x) / var.lower.abs().max(1.0));
            }
            if var.upper.is_finite() {
                worst = worst.max((x - var.upper) / var.upper.abs().max(1.0));
            }
        }
        for row in &self.constraints {
            let lhs: f64 = row.terms.iter().map(|&(v, c)| c * values[v.0]).sum();
            let scale = row.rhs.abs().max(1.0);
            let v = match row.relation {
                Relation::Le => lhs - row.rhs,
                Relation::Ge => row.rhs - lhs,
                Relation::Eq => (lhs - row.rhs).abs(),
            };
            worst = worst.max(v / scale);
        }
        worst
    }

    fn validate(&self) -> Result<(), LpError> {
        let n = self.variables.len();
        for var in &self.variables {
            if var.lower.is_nan() || var.upper.is_nan() {
                return Err(LpError::Malformed(format!("NaN bound on {}", var.name)));
            }
            if var.lower > var.upper {
                return Err(LpError::Malformed(format!(
                    "bounds of {} are inverted ({} > {})",
                    var.name, var.lower, var.upper
                )));
            }
            if var.lower == f64::INFINITY || var.upper == f64::NEG_INFINITY {
                return Err(LpError::Malformed(format!("empty domain for {}", var.name)));
            }
        }
        let check_terms = |what: &str, terms: &[(VarId, f64)]| {
            for &(v, c) in terms {
                if v.0 >= n {
                    return Err(LpError::Malformed(format!(
                        "{what} references undeclared variable #{}",
                        v.0
                    )));
                }
                if !c.is_finite() {
                    return Err(LpError::Malformed(format!(
                        "{what} has non-finite coefficient on {}",
                        self.variables[v.0].name
                    )));
                }
            }
            Ok(())
        };
        check_terms("objective", &self.objective)?;
        for row in &self.constraints {
            check_terms(&format!("constraint {}", row.name), &row.terms)?;
            if !row.rhs.is_finite() {
                return Err(LpError::Malformed(format!(
                    "constraint {} has non-finite rhs",
                    row.name
                )));
            }
        }
        Ok(())
    }

    /// Human-readable listing in LP-text style.
    pub fn to_lp_text(&self) -> String {
        let mut out = String::new();
        let term_list = |terms: &[(VarId, f64)]| {
            let mut s = String::new();
            for (i, &(v, c)) in terms.iter().enumerate() {
                let name = &self.variables[v.0].name;
                if i == 0 {
                    let _ = write!(s, "{c} {name}");
                } else if c < 0.0 {
                    let _ = write!(s, " - {} {name}", -c);
                } else {
                    let _ = write!(s, " + {c} {name}");
                }
            }
            if s.is_empty() {
                s.push('0');
            }
            s
        };
        let _ = writeln!(out, "Maximize");
        let _ = writeln!(out, "  obj: {}", term_list(&self.objective));
        let _ = writeln!(out, "Subject To");
        for row in &self.constraints {
            let _ = writeln!(
                out,
                "  {}: {} {} {}",
                row.name,
                term_list(&row.terms),
                row.relation,
                row.rhs
            );
        }
        let _ = writeln!(out, "Bounds");
        for var in &self.variables {
            let lo = if var.lower.is_finite() {
                var.lower.to_string()
            } else {
                "-inf".to_string()
            };
            let hi = if var.upper.is_finite() {
                var.upper.to_string()
            } else {
                "+inf".to_string()
            };
            let _ = writeln!(out, "  {lo} <= {} <= {hi}", var.name);
        }
        let _ = writeln!(out, "End");
        out
    }

    pub fn solve(&self) -> Result<LpSolution, LpError> {
        self.validate()?;
        StandardForm::build(self).solve(self)
    }
}

/// How an original variable maps onto nonnegative standard-form columns:
/// `x = offset + sign * y[col]` (minus `y[neg_col]` for free variables).
#[derive(Debug, Clone, Copy)]
struct Substitution {
    offset: f64,
    sign: f64,
    col: usize,
    neg_col: Option<usize>,
}

struct Row {
    coefs: Vec<(usize, f64)>,
    relation: Relation,
    rhs: f64,
}

struct StandardForm {
    subs: Vec<Substitution>,
    num_structural: usize,
    rows: Vec<Row>,
    objective: Vec<f64>,
    objective_offset: f64,
}

impl StandardForm {
    fn build(lp: &LinearProgram) -> Self {
        let mut subs = Vec::with_capacity(lp.variables.len());
        let mut rows = Vec::new();
        let mut ncols = 0;
        for var in &lp.variables {
            let sub = match (var.lower.is_finite(), var.upper.is_finite()) {
                (true, _) => {
                    let s = Substitution {
                        offset: var.lower,
                        sign: 1.0,
                        col: ncols,
                        neg_col: None,
                    };
                    if var.upper.is_finite() {
                        rows.push(Row {
                            coefs: vec![(ncols, 1.0)],
                            relation: Relation::Le,
                            rhs: var.upper - var.lower,
                        });
                    }
                    ncols += 1;
                    s
                }
                (false, true) => {
                    ncols += 1;
                    Substitution {
                        offset: var.upper,
                        sign: -1.0,
                        col: ncols - 1,
                        neg_col: None,
                    }
                }
                (false, false) => {
                    ncols += 2;
                    Substitution {
                        offset: 0.0,
                        sign: 1.0,
                        col: ncols - 2,
                        neg_col: Some(ncols - 1),
                    }
                }
            };
            subs.push(sub);
        }

        let lower = |terms: &[(VarId, f64)]| {
            let mut dense = vec![0.0; ncols];
            let mut constant = 0.0;
            for &(v, c) in terms {
                let s = subs[v.0];
                constant += c * s.offset;
                dense[s.col] += c * s.sign;
                if let Some(nc) = s.neg_col {
                    dense[nc] -= c;
                }
            }
            (dense, constant)
        };

        for row in &lp.constraints {
            let (dense, constant) = lower(&row.terms);
            rows.push(Row {
                coefs: dense
                    .into_iter()
                    .enumerate()
                    .filter(|&(_, c)| c != 0.0)
                    .collect(),
                relation: row.relation,
                rhs: row.rhs - constant,
            });
        }
        let (objective, objective_offset) = lower(&lp.objective);
        StandardForm {
            subs,
            num_structural: ncols,
            rows,
            objective,
            objective_offset,
        }
    }

    fn solve(self, lp: &LinearProgram) -> Result<LpSolution, LpError> {
        let m = self.rows.len();
        let n_struct = self.num_structural;

        // Column layout: structural | slack/surplus | artificial | rhs
        let n_slack = self
            .rows
            .iter()
            .filter(|r| r.relation != Relation::Eq)
            .count();
        let n_art = self
            .rows
            .iter()
            .filter(|r| {
                let flipped = r.rhs < 0.0;
                match r.relation {
                    Relation::Le => flipped,
                    Relation::Ge => !flipped,
                    Relation::Eq => true,
                }
            })
            .count();
        let art_start = n_struct + n_slack;
        let width = art_start + n_art + 1;
        let rhs_col = width - 1;

        let mut tab = Tableau {
            data: vec![0.0; (m + 1) * width],
            width,
            rows: m,
            basis: vec![0; m],
        };
        let mut next_slack = n_struct;
        let mut next_art = art_start;
        for (i, row) in self.rows.iter().enumerate() {
            let flip = if row.rhs < 0.0 { -1.0 } else { 1.0 };
            for &(j, c) in &row.coefs {
                *tab.at(i, j) = flip * c;
            }
            *tab.at(i, rhs_col) = flip * row.rhs;
            let slack = match row.relation {
                Relation::Le => Some(flip),
                Relation::Ge => Some(-flip),
                Relation::Eq => None,
            };
            if let Some(coef) = slack {
                *tab.at(i, next_slack) = coef;
                next_slack += 1;
                if coef > 0.0 {
                    tab.basis[i] = next_slack - 1;
                    continue;
                }
            }
            *tab.at(i, next_art) = 1.0;
            tab.basis[i] = next_art;
            next_art += 1;
        }

        let mut pivots = 0;

        if n_art > 0 {
            // Phase 1: maximize -(sum of artificials).
            for j in art_start..art_start + n_art {
                *tab.at(m, j) = 1.0;
            }
            for i in 0..m {
                if tab.basis[i] >= art_start {
                    for j in 0..width {
                        let v = tab.get(i, j);
                        *tab.at(m, j) -= v;
                    }
                }
            }
            match tab.run(width - 1, &mut pivots)? {
                Phase::Optimal => {}
                Phase::Unbounded => unreachable!("phase 1 objective is bounded"),
            }
            if tab.get(m, rhs_col) < -FEAS_TOL {
                return Ok(LpSolution {
                    status: LpStatus::Infeasible,
                    values: Vec::new(),
                    objective_value: f64::NAN,
                });
            }
            // Drive remaining artificials out of the basis.
            let mut i = 0;
            while i < tab.rows {
                if tab.basis[i] >= art_start {
                    let col = (0..art_start).find(|&j| tab.get(i, j).abs() > PIVOT_TOL);
                    match col {
                        Some(j) => {
                            tab.pivot(i, j);
                            pivots += 1;
                        }
                        None => {
                            tab.remove_row(i);
                            continue;
                        }
                    }
                }
                i += 1;
            }
        }

        // Phase 2 over structural + slack columns only.
        let m = tab.rows;
        for j in 0..width {
            *tab.at(m, j) = 0.0;
        }
        for (j, &c) in self.objective.iter().enumerate() {
            *tab.at(m, j) = -c;
        }
        for i in 0..m {
            let b = tab.basis[i];
            let cb = -tab.get(m, b);
            if cb != 0.0 {
                for j in 0..width {
                    let v = tab.get(i, j);
                    *tab.at(m, j) += cb * v;
                }
            }
        }
        match tab.run(art_start, &mut pivots)? {
            Phase::Optimal => {}
            Phase::Unbounded => {
                return Ok(LpSolution {
                    status: LpStatus::Unbounded,
                    values: Vec::new(),
                    objective_value: f64::INFINITY,
                })
            }
        }

        let mut y = vec![0.0; n_struct];
        for i in 0..m {
            let b = tab.basis[i];
            if b < n_struct {
                y[b] = tab.get(i, rhs_col);
            }
        }
        let values: Vec<f64> = self
            .subs
            .iter()
            .map(|s| {
                let neg = s.neg_col.map_or(0.0, |c| y[c]);
                s.offset + s.sign * y[s.col] - neg
            })
            .collect();
        let objective_value = lp.objective_at(&values);
        debug_assert!(
            (objective_value - (tab.get(m, rhs_col) + self.objective_offset)).abs()
                <= 1e-6 * objective_value.abs().max(1.0)
        );
        Ok(LpSolution {
            status: LpStatus::Optimal,
            values,
            objective_value,
        })
    }
}

enum Phase {
    Optimal,
    Unbounded,
}

/// Dense tableau; row `rows` is the objective row holding reduced costs
/// (negative entry = improving column) and the current objective value in
/// the rhs column.
struct Tableau {
    data: Vec<f64>,
    width: usize,
    rows: usize,
    basis: Vec<usize>,
}

impl Tableau {
    fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.width + j]
    }

    fn at(&mut self, i: usize, j: usize) -> &mut f64 {
        &mut self.data[i * self.width + j]
    }

    fn remove_row(&mut self, i: usize) {
        let w = self.width;
        self.data.drain(i * w..(i + 1) * w);
        self.basis.remove(i);
        self.rows -= 1;
    }

    fn pivot(&mut self, r: usize, c: usize) {
        let w = self.width;
        let p = self.get(r, c);
        for j in 0..w {
            *self.at(r, j) /= p;
        }
        *self.at(r, c) = 1.0;
        for i in 0..=self.rows {
            if i == r {
                continue;
            }
            let f = self.get(i, c);
            if f == 0.0 {
                continue;
            }
            for j in 0..w {
                let v = self.get(r, j);
                *self.at(i, j) -= f * v;
            }
            *self.at(i, c) = 0.0;
        }
        self.basis[r] = c;
    }

    /// Bland's rule over columns `0..ncols`.
    fn run(&mut self, ncols: usize, pivots: &mut usize) -> Result<Phase, LpError> {
        let rhs = self.width - 1;
        let obj = self.rows;
        loop {
            let Some(enter) = (0..ncols).find(|&j| self.get(obj, j) < -FEAS_TOL) else {
                return Ok(Phase::Optimal);
            };
            let mut leave: Option<(usize, f64)> = None;
            for i in 0..self.rows {
                let a = self.get(i, enter);
                if a > PIVOT_TOL {
                    let ratio = self.get(i, rhs).max(0.0) / a;
                    leave = match leave {
                        None => Some((i, ratio)),
                        Some((li, lr)) => {
                            if ratio < lr - PIVOT_TOL
                                || (ratio <= lr + PIVOT_TOL && self.basis[i] < self.basis[li])
                            {
                                Some((i, ratio))
                            } else {
                                Some((li, lr))
                            }
                        }
                    };
                }
            }
            let Some((row, _)) = leave else {
                return Ok(Phase::Unbounded);
            };
            self.pivot(row, enter);
            *pivots += 1;
            if *pivots > MAX_PIVOTS {
                return Err(LpError::IterationLimit(MAX_PIVOTS));
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn box_optimum() {
        let mut lp = LinearProgram::new();
        let x = lp.add_var("x", 0.0, 5.0);
        lp.add_objective(x, 1.0);
        let sol = lp.solve().unwrap();
        assert_eq!(sol.status, LpStatus::Optimal);
        assert!((sol.value(x) - 5.0).abs() < 1e-12);
        assert!((sol.objective_value - 5.0).abs() < 1e-12);
    }

    #[test]
    fn contradictory_rows_are_infeasible() {
        let mut lp = LinearProgram::new();
        let x = lp.add_var("x", f64::NEG_INFINITY, f64::INFINITY);
        lp.add_objective(x, 1.0);
        lp.add_constraint("lo", [(x, 1.0)], Relation::Ge, 2.0);
        lp.add_constraint("hi", [(x, 1.0)], Relation::Le, 1.0);
        assert_eq!(lp.solve().unwrap().status, LpStatus::Infeasible);
    }

    #[test]
    fn degenerate_face_is_deterministic() {
        let build = || {
            let mut lp = LinearProgram::new();
            let x = lp.add_var("x", 0.0, f64::INFINITY);
            let y = lp.add_var("y", 0.0, f64::INFINITY);
            lp.set_objective([(x, 1.0), (y, 1.0)]);
            lp.add_constraint("cap", [(x, 1.0), (y, 1.0)], Relation::Le, 1.0);
            lp
        };
        let a = build().solve().unwrap();
        let b = build().solve().unwrap();
        assert!((a.objective_value - 1.0).abs() < 1e-12);
        assert_eq!(a.values, b.values);
    }

    #[test]
    fn unbounded_is_a_status() {
        let mut lp = LinearProgram::new();
        let x = lp.add_var("x", 0.0, f64::INFINITY);
        lp.add_objective(x, 1.0);
        assert_eq!(lp.solve().unwrap().status, LpStatus::Unbounded);
    }

    #[test]
    fn free_and_upper_only_variables() {
        // max -x - y  s.t. x >= -3 (row), y <= 4 bound only, y >= 1 (row)
        let mut lp = LinearProgram::new();
        let x = lp.add_var("x", f64::NEG_INFINITY, f64::INFINITY);
        let y = lp.add_var("y", f64::NEG_INFINITY, 4.0);
        lp.set_objective([(x, -1.0), (y, -1.0)]);
        lp.add_constraint("x_lo", [(x, 1.0)], Relation::Ge, -3.0);
        lp.add_constraint("y_lo", [(y, 1.0)], Relation::Ge, 1.0);
        let sol = lp.solve().unwrap();
        assert!((sol.value(x) + 3.0).abs() < 1e-9);
        assert!((sol.value(y) - 1.0).abs() < 1e-9);
        assert!((sol.objective_value - 2.0).abs() < 1e-9);
    }

    #[test]
    fn equality_rows_and_redundancy() {
        let mut lp = LinearProgram::new();
        let x = lp.add_var("x", 0.0, 10.0);
        let y = lp.add_var("y", 0.0, 10.0);
        lp.set_objective([(x, 2.0), (y, 1.0)]);
        lp.add_constraint("sum", [(x, 1.0), (y, 1.0)], Relation::Eq, 4.0);
        lp.add_constraint("sum_again", [(x, 2.0), (y, 2.0)], Relation::Eq, 8.0);
        let sol = lp.solve().unwrap();
        assert!((sol.value(x) - 4.0).abs() < 1e-9);
        assert!((sol.objective_value - 8.0).abs() < 1e-9);
        assert!(lp.max_violation(&sol.values) <= FEAS_TOL);
    }

    #[test]
    fn fixed_variable_via_equal_bounds() {
        let mut lp = LinearProgram::new();
        let x = lp.add_var("x", 3.0, 3.0);
        let y = lp.add_var("y", -5.0, 5.0);
        lp.set_objective([(y, 1.0)]);
        lp.add_constraint("c", [(x, 1.0), (y, 1.0)], Relation::Le, 4.0);
        let sol = lp.solve().unwrap();
        assert!((sol.value(x) - 3.0).abs() < 1e-12);
        assert!((sol.value(y) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn negative_rhs_le_row() {
        let mut lp = LinearProgram::new();
        let x = lp.add_var("x", f64::NEG_INFINITY, f64::INFINITY);
        lp.add_objective(x, 1.0);
        lp.add_constraint("c", [(x, 1.0)], Relation::Le, -7.5);
        let sol = lp.solve().unwrap();
        assert!((sol.value(x) + 7.5).abs() < 1e-9);
    }

    #[test]
    fn malformed_programs_are_rejected() {
        let mut lp = LinearProgram::new();
        let x = lp.add_var("x", 0.0, 1.0);
        lp.add_objective(x, f64::NAN);
        assert!(matches!(lp.solve(), Err(LpError::Malformed(_))));

        let mut other = LinearProgram::new();
        other.add_var("a", 0.0, 1.0);
        let stray = other.add_var("b", 0.0, 1.0);
        let mut lp = LinearProgram::new();
        let x = lp.add_var("x", 0.0, 1.0);
        lp.add_objective(x, 1.0);
        lp.add_constraint("bad", [(stray, 1.0)], Relation::Le, 1.0);
        assert!(matches!(lp.solve(), Err(LpError::Malformed(_))));

        let mut lp = LinearProgram::new();
        lp.add_var("x", 2.0, 1.0);
        assert!(matches!(lp.solve(), Err(LpError::Malformed(_))));
    }

    #[test]
    fn lp_text_lists_everything() {
        let mut lp = LinearProgram::new();
        let x = lp.add_var("x", 0.0, 5.0);
        let y = lp.add_var("y", f64::NEG_INFINITY, f64::INFINITY);
        lp.set_objective([(x, 1.0), (y, -2.0)]);
        lp.add_constraint("c1", [(x, 1.0), (y, 1.0)], Relation::Ge, 1.0);
        let text = lp.to_lp_text();
        assert!(text.contains("obj: 1 x - 2 y"));
        assert!(text.contains("c1: 1 x + 1 y >= 1"));
        assert!(text.contains("-inf <= y <= +inf"));
    }
}
