//! Explicit relaxed MIQCP: variables, linear and quadratic rows, objective.
//!
//! The solvers work on [`PortfolioInstance`] directly. This form exists to
//! dump the program for external cross-checks and to verify that a decision,
//! completed with its implied interval indicators and slacks, satisfies every
//! row.

use std::fmt::Write as _;

use super::{min_f_beta, hour_losses, PortfolioDecision, PortfolioError, PortfolioInstance};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VarKind {
    Binary,
    Continuous,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Variable {
    pub name: String,
    pub kind: VarKind,
    pub lo: f64,
    pub hi: f64,
    pub objective: f64,
}

/// Sparse `sum coef * var`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LinearExpr {
    pub terms: Vec<(usize, f64)>,
}

impl LinearExpr {
    pub fn push(&mut self, var: usize, coef: f64) {
        if coef != 0.0 {
            self.terms.push((var, coef));
        }
    }

    pub fn eval(&self, values: &[f64]) -> f64 {
        self.terms.iter().map(|(v, c)| c * values[*v]).sum()
    }

    pub fn coef(&self, var: usize) -> f64 {
        self.terms.iter().filter(|(v, _)| *v == var).map(|(_, c)| c).sum()
    }

    fn scaled(&self, k: f64) -> Self {
        Self {
            terms: self.terms.iter().map(|(v, c)| (*v, c * k)).collect(),
        }
    }

    fn extend(&mut self, other: &LinearExpr) {
        self.terms.extend_from_slice(&other.terms);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    Le,
    Ge,
    Eq,
}

/// `linear + quad_coef * (quad_expr)^2  <sense>  rhs`.
#[derive(Debug, Clone, PartialEq)]
pub struct Constraint {
    pub name: String,
    pub linear: LinearExpr,
    pub quadratic: Option<(f64, LinearExpr)>,
    pub sense: Sense,
    pub rhs: f64,
}

impl Constraint {
    pub fn lhs(&self, values: &[f64]) -> f64 {
        let mut v = self.linear.eval(values);
        if let Some((c, e)) = &self.quadratic {
            let s = e.eval(values);
            v += c * s * s;
        }
        v
    }

    /// Amount by which the row is violated (0 when satisfied).
    pub fn violation(&self, values: &[f64]) -> f64 {
        let l = self.lhs(values);
        match self.sense {
            Sense::Le => (l - self.rhs).max(0.0),
            Sense::Ge => (self.rhs - l).max(0.0),
            Sense::Eq => (l - self.rhs).abs(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SlackCheck {
    pub max_violation: f64,
    pub worst: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MiqcpProblem {
    pub variables: Vec<Variable>,
    pub constraints: Vec<Constraint>,
    pub z_inc: Vec<Vec<usize>>,
    pub z_dec: Vec<Vec<usize>>,
    /// `[hour][segment]`
    pub d: Vec<Vec<usize>>,
    pub v: Vec<Vec<usize>>,
    pub w: Vec<Vec<usize>>,
    pub alpha: Vec<usize>,
    /// `[hour][sample]`
    pub q: Vec<Vec<usize>>,
    beta: f64,
}

struct Registry(Vec<Variable>);

impl Registry {
    fn add(&mut self, name: String, kind: VarKind, lo: f64, hi: f64, objective: f64) -> usize {
        self.0.push(Variable {
            name,
            kind,
            lo,
            hi,
            objective,
        });
        self.0.len() - 1
    }
}

pub fn build_problem(instance: &PortfolioInstance) -> Result<MiqcpProblem, PortfolioError> {
    instance.validate()?;
    let n = instance.num_nodes();
    let hours = instance.num_hours();
    let costs = &instance.costs;
    let inf = f64::INFINITY;
    let mut reg = Registry(Vec::new());

    let mut z_inc = vec![Vec::with_capacity(hours); n];
    let mut z_dec = vec![Vec::with_capacity(hours); n];
    for i in 0..n {
        for h in 0..hours {
            let e = instance.expected_spread[i][h];
            z_inc[i].push(reg.add(format!("z_inc[{i},{h}]"), VarKind::Binary, 0.0, 1.0, e - costs.gamma_inc));
        }
    }
    for i in 0..n {
        for h in 0..hours {
            let e = instance.expected_spread[i][h];
            z_dec[i].push(reg.add(format!("z_dec[{i},{h}]"), VarKind::Binary, 0.0, 1.0, -e - costs.gamma_dec));
        }
    }
    let mut d = Vec::with_capacity(hours);
    let mut v = Vec::with_capacity(hours);
    let mut w = Vec::with_capacity(hours);
    for (h, pwl) in instance.pwl.iter().enumerate() {
        let m = pwl.num_segments();
        d.push((0..m).map(|j| reg.add(format!("d[{j},{h}]"), VarKind::Binary, 0.0, 1.0, 0.0)).collect::<Vec<_>>());
        v.push((0..m).map(|j| reg.add(format!("v[{j},{h}]"), VarKind::Continuous, -inf, inf, 0.0)).collect::<Vec<_>>());
        w.push((0..m).map(|j| reg.add(format!("w[{j},{h}]"), VarKind::Continuous, -inf, inf, 1.0)).collect::<Vec<_>>());
    }
    let alpha: Vec<usize> = (0..hours)
        .map(|h| reg.add(format!("alpha[{h}]"), VarKind::Continuous, -inf, inf, 0.0))
        .collect();
    let q: Vec<Vec<usize>> = (0..hours)
        .map(|h| {
            (0..instance.samples[h].len())
                .map(|k| reg.add(format!("q[{h},{k}]"), VarKind::Continuous, 0.0, inf, 0.0))
                .collect()
        })
        .collect();

    let mut rows = Vec::new();
    let mut row = |name: String, linear: LinearExpr, quadratic: Option<(f64, LinearExpr)>, sense, rhs| {
        rows.push(Constraint {
            name,
            linear,
            quadratic,
            sense,
            rhs,
        })
    };

    if instance.exclusive {
        for i in 0..n {
            for h in 0..hours {
                let mut e = LinearExpr::default();
                e.push(z_inc[i][h], 1.0);
                e.push(z_dec[i][h], 1.0);
                row(format!("exclusive[{i},{h}]"), e, None, Sense::Le, 1.0);
            }
        }
    }
    let mut budget = LinearExpr::default();
    for i in 0..n {
        for h in 0..hours {
            budget.push(z_inc[i][h], costs.prox_inc);
            budget.push(z_dec[i][h], costs.prox_dec);
        }
    }
    row("budget".into(), budget, None, Sense::Le, instance.budget);

    for (h, pwl) in instance.pwl.iter().enumerate() {
        let mut x = LinearExpr::default();
        for i in 0..n {
            x.push(z_inc[i][h], 1.0);
            x.push(z_dec[i][h], -1.0);
        }
        let big_m = pwl.big_m;
        row(format!("x_lo[{h}]"), x.clone(), None, Sense::Ge, pwl.x_lo);
        row(format!("x_hi[{h}]"), x.clone(), None, Sense::Le, pwl.x_hi);
        let mut one = LinearExpr::default();
        for &dj in &d[h] {
            one.push(dj, 1.0);
        }
        row(format!("one_interval[{h}]"), one, None, Sense::Eq, 1.0);
        for (j, seg) in pwl.segments.iter().enumerate() {
            // x >= c_j - M (1 - d_j)
            let mut lo = x.clone();
            lo.push(d[h][j], -big_m);
            row(format!("interval_lo[{j},{h}]"), lo, None, Sense::Ge, seg.start - big_m);
            // x <= c_{j+1} + M (1 - d_j)
            let mut hi = x.clone();
            hi.push(d[h][j], big_m);
            row(format!("interval_hi[{j},{h}]"), hi, None, Sense::Le, pwl.segment_end(j) + big_m);
            // v <= a x^2 + b x
            let mut sv = x.scaled(-seg.intercept);
            sv.push(v[h][j], 1.0);
            row(format!("slack_v[{j},{h}]"), sv, Some((-seg.slope, x.clone())), Sense::Le, 0.0);
            // w <= v + M (1 - d)
            let mut a = LinearExpr::default();
            a.push(w[h][j], 1.0);
            a.push(v[h][j], -1.0);
            a.push(d[h][j], big_m);
            row(format!("slack_w_active[{j},{h}]"), a, None, Sense::Le, big_m);
            // -M d <= w <= M d
            let mut b = LinearExpr::default();
            b.push(w[h][j], 1.0);
            b.push(d[h][j], -big_m);
            row(format!("slack_w_upper[{j},{h}]"), b, None, Sense::Le, 0.0);
            let mut c = LinearExpr::default();
            c.push(w[h][j], 1.0);
            c.push(d[h][j], big_m);
            row(format!("slack_w_lower[{j},{h}]"), c, None, Sense::Ge, 0.0);
        }
        for (k, sample) in instance.samples[h].iter().enumerate() {
            // f_hk(z) - alpha_h - q_hk <= 0
            let mut f = LinearExpr::default();
            for i in 0..n {
                f.push(z_inc[i][h], -(sample[i] - costs.gamma_inc));
                f.push(z_dec[i][h], sample[i] + costs.gamma_dec);
            }
            f.push(alpha[h], -1.0);
            f.push(q[h][k], -1.0);
            row(format!("tail[{h},{k}]"), f, None, Sense::Le, 0.0);
        }
    }
    if instance.risk_limit.is_finite() {
        let mut r = LinearExpr::default();
        for h in 0..hours {
            r.push(alpha[h], 1.0);
            let k = 1.0 / ((1.0 - instance.beta) * q[h].len() as f64);
            let mut qs = LinearExpr::default();
            for &qk in &q[h] {
                qs.push(qk, 1.0);
            }
            r.extend(&qs.scaled(k));
        }
        row("risk".into(), r, None, Sense::Le, instance.risk_limit);
    }

    Ok(MiqcpProblem {
        variables: reg.0,
        constraints: rows,
        z_inc,
        z_dec,
        d,
        v,
        w,
        alpha,
        q,
        beta: instance.beta,
    })
}

impl MiqcpProblem {
    pub fn num_variables(&self) -> usize {
        self.variables.len()
    }

    pub fn objective(&self, values: &[f64]) -> f64 {
        self.variables.iter().zip(values).map(|(v, x)| v.objective * x).sum()
    }

    /// Largest violation over rows, variable bounds and integrality.
    pub fn check(&self, values: &[f64]) -> SlackCheck {
        let mut out = SlackCheck {
            max_violation: 0.0,
            worst: None,
        };
        let mut note = |v: f64, name: &str| {
            if v > out.max_violation {
                out.max_violation = v;
                out.worst = Some(name.to_string());
            }
        };
        for (var, x) in self.variables.iter().zip(values) {
            note((var.lo - x).max(x - var.hi).max(0.0), &var.name);
            if var.kind == VarKind::Binary {
                note((x - x.round()).abs(), &var.name);
            }
        }
        for c in &self.constraints {
            note(c.violation(values), &c.name);
        }
        out
    }

    /// Full assignment for a binary decision: interval indicators from the
    /// position, alpha and tail slacks at the sample-loss minimizer, and
    /// `v`, `w` pushed to the tightest upper bound their rows allow.
    pub fn complete_assignment(
        &self,
        instance: &PortfolioInstance,
        decision: &PortfolioDecision,
    ) -> Result<Vec<f64>, PortfolioError> {
        let mut x = vec![0.0; self.variables.len()];
        for (i, row) in self.z_inc.iter().enumerate() {
            for (h, &var) in row.iter().enumerate() {
                x[var] = f64::from(u8::from(decision.inc[i][h]));
                x[self.z_dec[i][h]] = f64::from(u8::from(decision.dec[i][h]));
            }
        }
        for h in 0..self.d.len() {
            let pos = decision.net_position(h) as f64;
            let j = instance.pwl[h].active_segment(pos)?;
            x[self.d[h][j]] = 1.0;
            let losses = hour_losses(instance, decision, h);
            let (a, _) = min_f_beta(&losses, self.beta)?;
            x[self.alpha[h]] = a;
            for (k, l) in losses.iter().enumerate() {
                x[self.q[h][k]] = (l - a).max(0.0);
            }
        }
        let order: Vec<usize> = self.v.iter().flatten().chain(self.w.iter().flatten()).copied().collect();
        for var in order {
            x[var] = self.tightest_upper(var, &x);
        }
        Ok(x)
    }

    fn tightest_upper(&self, var: usize, values: &[f64]) -> f64 {
        let mut best = f64::INFINITY;
        for c in &self.constraints {
            let coef = c.linear.coef(var);
            if coef == 0.0 {
                continue;
            }
            let rest = c.lhs(values) - coef * values[var];
            let bound = (c.rhs - rest) / coef;
            let upper = match c.sense {
                Sense::Le => coef > 0.0,
                Sense::Ge => coef < 0.0,
                Sense::Eq => true,
            };
            if upper {
                best = best.min(bound);
            }
        }
        best.min(self.variables[var].hi)
    }

    /// Human-readable listing, stable across runs.
    pub fn dump(&self) -> String {
        let mut s = String::new();
        let name = |v: usize| self.variables[v].name.as_str();
        let expr = |e: &LinearExpr| {
            e.terms
                .iter()
                .map(|(v, c)| format!("{c:+} {}", name(*v)))
                .collect::<Vec<_>>()
                .join(" ")
        };
        writeln!(s, "maximize").unwrap();
        for v in self.variables.iter().filter(|v| v.objective != 0.0) {
            writeln!(s, "  {:+} {}", v.objective, v.name).unwrap();
        }
        writeln!(s, "subject to").unwrap();
        for c in &self.constraints {
            let sense = match c.sense {
                Sense::Le => "<=",
                Sense::Ge => ">=",
                Sense::Eq => "=",
            };
            let quad = match &c.quadratic {
                Some((k, e)) => format!(" {k:+} ( {} )^2", expr(e)),
                None => String::new(),
            };
            writeln!(s, "  {}: {}{quad} {sense} {}", c.name, expr(&c.linear), c.rhs).unwrap();
        }
        writeln!(s, "bounds").unwrap();
        for v in &self.variables {
            let kind = match v.kind {
                VarKind::Binary => "binary",
                VarKind::Continuous => "continuous",
            };
            writeln!(s, "  {} {} <= {} <= {}", kind, v.lo, v.name, v.hi).unwrap();
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::super::test_support::*;
    use super::super::*;
    use super::*;
    use crate::sensitivity::SensitivityBounds;

    #[test]
    fn variable_count_single_node_hour() {
        let mut inst = instance(vec![vec![4.0]], vec![flat_pwl(0)], CostSchedule::default());
        inst.samples = vec![vec![vec![1.0], vec![3.0]]];
        inst.risk_limit = 10.0;
        let p = build_problem(&inst).unwrap();
        assert_eq!(p.num_variables(), 8);
        assert!(p.dump().contains("risk:"));
    }

    #[test]
    fn completed_decision_is_feasible_and_matches_evaluation() {
        let pwl = PwlSensitivity::linear(0, -1.5, SensitivityBounds::new(-3.0, 3.0).unwrap()).unwrap();
        let mut inst = instance(
            vec![vec![5.0], vec![4.0], vec![-6.0]],
            vec![pwl],
            CostSchedule::new(0.5, 0.5, 1.0, 1.0).unwrap(),
        );
        inst.samples = vec![vec![vec![2.0, 1.0, -1.0], vec![-4.0, 3.0, 0.5], vec![6.0, -2.0, -3.0]]];
        inst.risk_limit = 50.0;
        let p = build_problem(&inst).unwrap();
        let mut dec = PortfolioDecision::empty(3, 1);
        dec.inc[0][0] = true;
        dec.inc[1][0] = true;
        let vals = p.complete_assignment(&inst, &dec).unwrap();
        let chk = p.check(&vals);
        assert!(chk.max_violation < 1e-9, "{chk:?}");
        let e = evaluate(&inst, &dec);
        assert!((p.objective(&vals) - e.objective).abs() < 1e-9);
        // x = 2 on the single segment: w = -1.5 * 4
        assert!((vals[p.w[0][0]] + 6.0).abs() < 1e-12);
    }

    #[test]
    fn inactive_slack_is_zero() {
        let pwl = PwlSensitivity::from_knots(
            0,
            &[(-2.0, 1.0), (0.0, 0.0), (2.0, -3.0)],
            SensitivityBounds::new(-4.0, 4.0).unwrap(),
        )
        .unwrap();
        assert!(pwl.num_segments() >= 2);
        let inst = instance(vec![vec![3.0], vec![2.0]], vec![pwl.clone()], CostSchedule::default());
        let p = build_problem(&inst).unwrap();
        let mut dec = PortfolioDecision::empty(2, 1);
        dec.inc[0][0] = true;
        dec.inc[1][0] = true;
        let vals = p.complete_assignment(&inst, &dec).unwrap();
        assert!(p.check(&vals).max_violation < 1e-9);
        let active = pwl.active_segment(2.0).unwrap();
        for (j, &w) in p.w[0].iter().enumerate() {
            if j == active {
                let s = pwl.segments[j];
                assert!((vals[w] - (s.slope * 4.0 + s.intercept * 2.0)).abs() < 1e-9);
            } else {
                assert_eq!(vals[w], 0.0);
            }
        }
    }

    #[test]
    fn infinite_risk_limit_drops_row() {
        let inst = instance(vec![vec![1.0]], vec![flat_pwl(0)], CostSchedule::default());
        let p = build_problem(&inst).unwrap();
        assert!(p.constraints.iter().all(|c| c.name != "risk"));
    }
}
