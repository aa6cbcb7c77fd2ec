//! Depth-first branch-and-bound over node-hour states.
//!
//! Variables are fixed hour by hour, node by node; each node-hour takes one
//! of none/INC/DEC (and both, when exclusivity is off). The interval
//! indicators are never branched on: they follow from the hour's position.
//!
//! Upper bound at a search node, for a multiplier `mu >= 0` on the risk row
//! and per-hour tail weights `q_h`:
//!
//! * finished hours contribute their exact objective minus `mu` times their
//!   exact CVaR;
//! * every unfinished hour replaces its CVaR by the linear lower bound
//!   `sum_k q_hk loss_k`, which makes lot values separable, and is then
//!   maximized over the number of INC and DEC lots taken from its free
//!   nodes, using the best lots of each side and the exact `x * shift(x)`;
//! * the collateral budget is relaxed to a cap on the lot count, shared
//!   across the remaining hours through a max-plus convolution table.
//!
//! The bound is `mu * C` plus the above, minimized over the multipliers in
//! use (`mu = 0`, and a root-optimized `mu` when the risk limit is finite).

use super::hourly::{patterns_per_hour, solve_hourly, MAX_HOUR_PATTERNS};
use super::{
    empirical_cvar, hour_losses, tail_weights, PortfolioDecision, PortfolioError,
    PortfolioInstance, Side, SolutionReport, SolverStats, FEASIBILITY_TOL,
};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum SearchStrategy {
    /// Whole-hour patterns when an hour has at most 6561 of them, else
    /// node-hour branching.
    #[default]
    Auto,
    NodeWise,
    HourWise,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BranchAndBoundOptions {
    /// Search nodes explored before giving up with the incumbent.
    pub node_limit: u64,
    pub strategy: SearchStrategy,
}

impl Default for BranchAndBoundOptions {
    fn default() -> Self {
        Self {
            node_limit: 2_000_000,
            strategy: SearchStrategy::Auto,
        }
    }
}

const PRUNE_TOL: f64 = 1e-9;
const MAX_CONTEXTS: usize = 2;

struct Context {
    mu: f64,
    /// `[hour][node]` lot value minus `mu` times the lot's weighted loss.
    adj_inc: Vec<Vec<f64>>,
    adj_dec: Vec<Vec<f64>>,
    /// Node indices by descending adjusted value, per hour.
    order_inc: Vec<Vec<usize>>,
    order_dec: Vec<Vec<usize>>,
    /// `suffix[h][l]`: best bound value of hours `h..` using at most `l` lots.
    suffix: Vec<Vec<f64>>,
}

#[derive(Clone, Copy)]
struct State {
    hour: usize,
    node: usize,
    x: i64,
    linear: f64,
    adj: [f64; MAX_CONTEXTS],
    collateral: f64,
    done_objective: f64,
    done_cvar: f64,
}

struct Solver<'a> {
    inst: &'a PortfolioInstance,
    n: usize,
    hours: usize,
    value_inc: Vec<Vec<f64>>,
    value_dec: Vec<Vec<f64>>,
    /// `[hour][sample][node]` loss of one INC (resp. DEC) lot.
    loss_inc: Vec<Vec<Vec<f64>>>,
    loss_dec: Vec<Vec<Vec<f64>>>,
    /// `g[h][x + n] = x * shift_h(x)`, `-inf` outside the bounds.
    g: Vec<Vec<f64>>,
    lots_per_hour: usize,
    lot_cap: usize,
    min_prox: f64,
    contexts: Vec<Context>,
    decision: PortfolioDecision,
    best: (f64, PortfolioDecision),
    nodes: u64,
    node_limit: u64,
    aborted: bool,
    prefix_buf: (Vec<f64>, Vec<f64>),
}

impl<'a> Solver<'a> {
    fn new(inst: &'a PortfolioInstance, node_limit: u64) -> Result<Self, PortfolioError> {
        let n = inst.num_nodes();
        let hours = inst.num_hours();
        let c = &inst.costs;
        let mut value_inc = vec![vec![0.0; n]; hours];
        let mut value_dec = vec![vec![0.0; n]; hours];
        let mut loss_inc = Vec::with_capacity(hours);
        let mut loss_dec = Vec::with_capacity(hours);
        let mut g = Vec::with_capacity(hours);
        for h in 0..hours {
            for i in 0..n {
                value_inc[h][i] = inst.lot_value(i, h, Side::Inc);
                value_dec[h][i] = inst.lot_value(i, h, Side::Dec);
            }
            loss_inc.push(
                inst.samples[h]
                    .iter()
                    .map(|s| s.iter().map(|l| inst.lot_loss(*l, Side::Inc)).collect())
                    .collect::<Vec<Vec<f64>>>(),
            );
            loss_dec.push(
                inst.samples[h]
                    .iter()
                    .map(|s| s.iter().map(|l| inst.lot_loss(*l, Side::Dec)).collect())
                    .collect::<Vec<Vec<f64>>>(),
            );
            let pwl = &inst.pwl[h];
            g.push(
                (-(n as i64)..=n as i64)
                    .map(|x| {
                        let xf = x as f64;
                        match pwl.active_segment(xf) {
                            Ok(j) => {
                                let s = &pwl.segments[j];
                                s.slope * xf * xf + s.intercept * xf
                            }
                            Err(_) => f64::NEG_INFINITY,
                        }
                    })
                    .collect(),
            );
        }
        let lots_per_hour = if inst.exclusive { n } else { 2 * n };
        Ok(Self {
            inst,
            n,
            hours,
            value_inc,
            value_dec,
            loss_inc,
            loss_dec,
            g,
            lots_per_hour,
            lot_cap: lots_per_hour * hours,
            min_prox: c.prox_inc.min(c.prox_dec),
            contexts: Vec::new(),
            decision: PortfolioDecision::empty(n, hours),
            best: (0.0, PortfolioDecision::empty(n, hours)),
            nodes: 0,
            node_limit,
            aborted: false,
            prefix_buf: (Vec::new(), Vec::new()),
        })
    }

    fn lots_allowed(&self, collateral: f64) -> usize {
        if self.min_prox <= 0.0 {
            return self.lot_cap;
        }
        let room = ((self.inst.budget - collateral + FEASIBILITY_TOL) / self.min_prox).floor();
        if room < 0.0 {
            0
        } else {
            room.min(self.lot_cap as f64) as usize
        }
    }

    fn make_context(&self, mu: f64, weights: &[Vec<f64>]) -> Context {
        let mut adj_inc = self.value_inc.clone();
        let mut adj_dec = self.value_dec.clone();
        if mu > 0.0 {
            for h in 0..self.hours {
                for i in 0..self.n {
                    let (mut li, mut ld) = (0.0, 0.0);
                    for (k, q) in weights[h].iter().enumerate() {
                        li += q * self.loss_inc[h][k][i];
                        ld += q * self.loss_dec[h][k][i];
                    }
                    adj_inc[h][i] -= mu * li;
                    adj_dec[h][i] -= mu * ld;
                }
            }
        }
        let order = |vals: &Vec<Vec<f64>>| -> Vec<Vec<usize>> {
            vals.iter()
                .map(|row| {
                    let mut o: Vec<usize> = (0..row.len()).collect();
                    o.sort_by(|a, b| row[*b].total_cmp(&row[*a]).then(a.cmp(b)));
                    o
                })
                .collect()
        };
        let order_inc = order(&adj_inc);
        let order_dec = order(&adj_dec);
        let mut suffix = vec![vec![0.0; self.lot_cap + 1]; self.hours + 1];
        for h in (0..self.hours).rev() {
            let table = self.hour_table(h, &adj_inc[h], &adj_dec[h], &order_inc[h], &order_dec[h]);
            for l in 0..=self.lot_cap {
                let mut best = f64::NEG_INFINITY;
                for (used, u) in table.iter().enumerate().take(l + 1) {
                    best = best.max(u + suffix[h + 1][l - used]);
                }
                suffix[h][l] = best;
            }
        }
        Context {
            mu,
            adj_inc,
            adj_dec,
            order_inc,
            order_dec,
            suffix,
        }
    }

    /// Best relaxed value of one whole hour using at most `l` lots.
    fn hour_table(&self, h: usize, ai: &[f64], ad: &[f64], oi: &[usize], od: &[usize]) -> Vec<f64> {
        let n = self.n;
        let pi = prefix(oi.iter().map(|&i| ai[i]));
        let pd = prefix(od.iter().map(|&i| ad[i]));
        let mut t = vec![f64::NEG_INFINITY; self.lots_per_hour + 1];
        for ki in 0..=n {
            for kd in 0..=n {
                let lots = ki + kd;
                if lots > self.lots_per_hour {
                    continue;
                }
                let v = pi[ki] + pd[kd] + self.g[h][n + ki - kd];
                if v > t[lots] {
                    t[lots] = v;
                }
            }
        }
        for l in 1..t.len() {
            t[l] = t[l].max(t[l - 1]);
        }
        t
    }

    fn bound_in(&mut self, s: &State, c: usize) -> f64 {
        let lots = self.lots_allowed(s.collateral);
        let (mut pi, mut pd) = std::mem::take(&mut self.prefix_buf);
        let ctx = &self.contexts[c];
        let h = s.hour;
        let n = self.n;
        pi.clear();
        pd.clear();
        pi.push(0.0);
        pd.push(0.0);
        for &i in &ctx.order_inc[h] {
            if i >= s.node {
                pi.push(pi.last().unwrap() + ctx.adj_inc[h][i]);
            }
        }
        for &i in &ctx.order_dec[h] {
            if i >= s.node {
                pd.push(pd.last().unwrap() + ctx.adj_dec[h][i]);
            }
        }
        let free = n - s.node;
        let mut best = f64::NEG_INFINITY;
        for ki in 0..=free {
            for kd in 0..=free {
                let extra = ki + kd;
                if extra > lots || (self.inst.exclusive && extra > free) {
                    continue;
                }
                let x = s.x + ki as i64 - kd as i64;
                let gx = self.g[h][(x + n as i64) as usize];
                if gx == f64::NEG_INFINITY {
                    continue;
                }
                let rest = ctx.suffix[h + 1][(lots - extra).min(self.lot_cap)];
                best = best.max(pi[ki] + pd[kd] + gx + rest);
            }
        }
        let mut total = s.done_objective + s.adj[c] + best;
        if ctx.mu > 0.0 {
            total += ctx.mu * (self.inst.risk_limit - s.done_cvar);
        }
        self.prefix_buf = (pi, pd);
        total
    }

    fn bound(&mut self, s: &State) -> f64 {
        let mut b = f64::INFINITY;
        for c in 0..self.contexts.len() {
            b = b.min(self.bound_in(s, c));
        }
        b
    }

    fn child(&self, s: &State, inc: bool, dec: bool) -> Option<State> {
        let c = &self.inst.costs;
        let (h, i) = (s.hour, s.node);
        let mut t = *s;
        t.node += 1;
        if inc {
            t.x += 1;
            t.linear += self.value_inc[h][i];
            t.collateral += c.prox_inc;
            for (k, ctx) in self.contexts.iter().enumerate() {
                t.adj[k] += ctx.adj_inc[h][i];
            }
        }
        if dec {
            t.x -= 1;
            t.linear += self.value_dec[h][i];
            t.collateral += c.prox_dec;
            for (k, ctx) in self.contexts.iter().enumerate() {
                t.adj[k] += ctx.adj_dec[h][i];
            }
        }
        (t.collateral <= self.inst.budget + FEASIBILITY_TOL).then_some(t)
    }

    fn explore(&mut self, s: State) {
        if self.aborted {
            return;
        }
        if s.node == self.n {
            self.finish_hour(s);
            return;
        }
        let states: &[(bool, bool)] = if self.inst.exclusive {
            &[(false, false), (true, false), (false, true)]
        } else {
            &[(false, false), (true, false), (false, true), (true, true)]
        };
        let mut children: Vec<(f64, State, bool, bool)> = Vec::with_capacity(states.len());
        for &(inc, dec) in states {
            if let Some(t) = self.child(&s, inc, dec) {
                let b = self.bound(&t);
                children.push((b, t, inc, dec));
            }
        }
        children.sort_by(|a, b| b.0.total_cmp(&a.0));
        let (h, i) = (s.hour, s.node);
        for (b, t, inc, dec) in children {
            if self.aborted || b <= self.best.0 + PRUNE_TOL {
                break;
            }
            self.nodes += 1;
            if self.nodes > self.node_limit {
                self.aborted = true;
                break;
            }
            self.decision.inc[i][h] = inc;
            self.decision.dec[i][h] = dec;
            self.explore(t);
            self.decision.inc[i][h] = false;
            self.decision.dec[i][h] = false;
        }
    }

    fn finish_hour(&mut self, s: State) {
        let h = s.hour;
        let gx = self.g[h][(s.x + self.n as i64) as usize];
        if gx == f64::NEG_INFINITY {
            return;
        }
        let losses = hour_losses(self.inst, &self.decision, h);
        let cvar = empirical_cvar(&losses, self.inst.beta).expect("validated samples").cvar;
        let next = State {
            hour: h + 1,
            node: 0,
            x: 0,
            linear: 0.0,
            adj: [0.0; MAX_CONTEXTS],
            collateral: s.collateral,
            done_objective: s.done_objective + s.linear + gx,
            done_cvar: s.done_cvar + cvar,
        };
        if next.hour == self.hours {
            if next.done_cvar <= self.inst.risk_limit + FEASIBILITY_TOL
                && next.done_objective > self.best.0
            {
                self.best = (next.done_objective, self.decision.clone());
            }
            return;
        }
        if self.bound(&next) > self.best.0 + PRUNE_TOL {
            self.explore(next);
        }
    }

    fn root(&self) -> State {
        State {
            hour: 0,
            node: 0,
            x: 0,
            linear: 0.0,
            adj: [0.0; MAX_CONTEXTS],
            collateral: 0.0,
            done_objective: 0.0,
            done_cvar: 0.0,
        }
    }

    fn root_bound_with(&mut self, mu: f64, weights: &[Vec<f64>]) -> f64 {
        let ctx = self.make_context(mu, weights);
        let saved = std::mem::replace(&mut self.contexts, vec![ctx]);
        let root = self.root();
        let b = self.bound_in(&root, 0);
        self.contexts = saved;
        b
    }
}

fn prefix(values: impl Iterator<Item = f64>) -> Vec<f64> {
    let mut out = vec![0.0];
    for v in values {
        out.push(out.last().unwrap() + v);
    }
    out
}

/// Hour-wise best-improvement local search from the empty portfolio; every
/// step keeps the decision feasible.
fn greedy(inst: &PortfolioInstance) -> (f64, PortfolioDecision) {
    let (n, hours) = (inst.num_nodes(), inst.num_hours());
    let mut d = PortfolioDecision::empty(n, hours);
    let hour_stats = |d: &PortfolioDecision, h: usize| -> Option<(f64, f64, f64)> {
        let x = d.net_position(h) as f64;
        let shift = inst.pwl[h].shift_at(x).ok()?;
        let mut obj = x * shift;
        let mut coll = 0.0;
        for i in 0..n {
            if d.inc[i][h] {
                obj += inst.lot_value(i, h, Side::Inc);
                coll += inst.costs.prox_inc;
            }
            if d.dec[i][h] {
                obj += inst.lot_value(i, h, Side::Dec);
                coll += inst.costs.prox_dec;
            }
        }
        let cvar = empirical_cvar(&hour_losses(inst, d, h), inst.beta).ok()?.cvar;
        Some((obj, coll, cvar))
    };
    let mut stats: Vec<(f64, f64, f64)> = (0..hours).map(|_| (0.0, 0.0, 0.0)).collect();
    let states: &[(bool, bool)] = if inst.exclusive {
        &[(false, false), (true, false), (false, true)]
    } else {
        &[(false, false), (true, false), (false, true), (true, true)]
    };
    for _ in 0..(4 * n * hours + 1) {
        let total_obj: f64 = stats.iter().map(|s| s.0).sum();
        let total_coll: f64 = stats.iter().map(|s| s.1).sum();
        let total_cvar: f64 = stats.iter().map(|s| s.2).sum();
        let mut best: Option<(f64, usize, usize, bool, bool, (f64, f64, f64))> = None;
        for h in 0..hours {
            for i in 0..n {
                let cur = (d.inc[i][h], d.dec[i][h]);
                for &(inc, dec) in states {
                    if (inc, dec) == cur {
                        continue;
                    }
                    d.inc[i][h] = inc;
                    d.dec[i][h] = dec;
                    if let Some(st) = hour_stats(&d, h) {
                        let obj = total_obj - stats[h].0 + st.0;
                        let coll = total_coll - stats[h].1 + st.1;
                        let cvar = total_cvar - stats[h].2 + st.2;
                        let gain = obj - total_obj;
                        if coll <= inst.budget + FEASIBILITY_TOL
                            && cvar <= inst.risk_limit + FEASIBILITY_TOL
                            && gain > 1e-12
                            && best.as_ref().is_none_or(|b| gain > b.0)
                        {
                            best = Some((gain, h, i, inc, dec, st));
                        }
                    }
                    d.inc[i][h] = cur.0;
                    d.dec[i][h] = cur.1;
                }
            }
        }
        match best {
            Some((_, h, i, inc, dec, st)) => {
                d.inc[i][h] = inc;
                d.dec[i][h] = dec;
                stats[h] = st;
            }
            None => break,
        }
    }
    (stats.iter().map(|s| s.0).sum(), d)
}

/// Tail weights of a reference portfolio per hour, uniform where it is empty.
fn reference_weights(inst: &PortfolioInstance, reference: &PortfolioDecision) -> Vec<Vec<f64>> {
    (0..inst.num_hours())
        .map(|h| {
            let ns = inst.samples[h].len();
            if (0..inst.num_nodes()).any(|i| reference.inc[i][h] || reference.dec[i][h]) {
                tail_weights(&hour_losses(inst, reference, h), inst.beta)
            } else {
                vec![1.0 / ns as f64; ns]
            }
        })
        .collect()
}

/// Lots with positive expected value, ignoring every constraint.
fn optimistic_portfolio(inst: &PortfolioInstance) -> PortfolioDecision {
    let mut d = PortfolioDecision::empty(inst.num_nodes(), inst.num_hours());
    for h in 0..inst.num_hours() {
        for i in 0..inst.num_nodes() {
            d.inc[i][h] = inst.lot_value(i, h, Side::Inc) > 0.0;
            d.dec[i][h] = inst.lot_value(i, h, Side::Dec) > 0.0;
        }
    }
    d
}

/// Convex in `mu`; golden-section search after bracketing by doubling.
fn best_multiplier(solver: &mut Solver<'_>, weights: &[Vec<f64>]) -> f64 {
    let mut f = |mu: f64| solver.root_bound_with(mu, weights);
    let f0 = f(0.0);
    let mut hi = 1.0;
    let mut fhi = f(hi);
    let mut steps = 0;
    while fhi < f0 && steps < 40 {
        hi *= 2.0;
        fhi = f(hi);
        steps += 1;
    }
    let (mut a, mut b) = (0.0f64, hi);
    let r = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..60 {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = f(d);
        }
    }
    let mu = 0.5 * (a + b);
    if f(mu) < f0 {
        mu
    } else {
        0.0
    }
}

pub fn solve_branch_and_bound(
    instance: &PortfolioInstance,
    options: &BranchAndBoundOptions,
) -> Result<SolutionReport, PortfolioError> {
    instance.validate()?;
    let (obj, start) = greedy(instance);
    let hour_wise = match options.strategy {
        SearchStrategy::HourWise => true,
        SearchStrategy::NodeWise => false,
        SearchStrategy::Auto => {
            patterns_per_hour(instance).is_some_and(|p| p <= MAX_HOUR_PATTERNS)
        }
    };
    if hour_wise {
        return solve_hourly(instance, (obj, start), options.node_limit);
    }
    let mut solver = Solver::new(instance, options.node_limit)?;
    solver.best = (obj, start.clone());

    let zero = vec![Vec::new(); instance.num_hours()];
    solver.contexts.push(solver.make_context(0.0, &zero));
    if instance.risk_limit.is_finite() {
        let reference = if start.num_bids() > 0 {
            start.clone()
        } else {
            optimistic_portfolio(instance)
        };
        let weights = reference_weights(instance, &reference);
        let mu = best_multiplier(&mut solver, &weights);
        if mu > 0.0 {
            let ctx = solver.make_context(mu, &weights);
            solver.contexts.push(ctx);
        }
    }
    let root = solver.root();
    let root_bound = solver.bound(&root);
    if root_bound > solver.best.0 + PRUNE_TOL {
        solver.explore(root);
    }
    let (best_obj, decision) = solver.best.clone();
    let gap = if solver.aborted {
        (root_bound - best_obj).max(0.0)
    } else {
        0.0
    };
    let report = SolutionReport::new(
        instance,
        decision,
        SolverStats {
            solver: "branch-and-bound",
            nodes: solver.nodes,
            gap,
        },
    );
    if solver.aborted {
        return Err(PortfolioError::NodeLimit {
            limit: options.node_limit,
            gap,
            incumbent: Box::new(report),
        });
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::super::test_support::*;
    use super::super::*;
    use super::*;
    use crate::sensitivity::SensitivityBounds;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_instance(rng: &mut ChaCha8Rng) -> PortfolioInstance {
        let n = rng.random_range(1..=3);
        let h = rng.random_range(1..=2);
        let ns = rng.random_range(1..=5);
        let spreads: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..h).map(|_| rng.random_range(-6.0..6.0)).collect())
            .collect();
        let pwl = (0..h).map(|hh| random_pwl(rng, hh, 3)).collect();
        let costs = CostSchedule::new(
            rng.random_range(0.0..1.0),
            rng.random_range(0.0..1.0),
            rng.random_range(0.5..2.0),
            rng.random_range(0.5..2.0),
        )
        .unwrap();
        let mut inst = instance(spreads.clone(), pwl, costs);
        inst.samples = (0..h)
            .map(|hh| {
                (0..ns)
                    .map(|_| (0..n).map(|i| spreads[i][hh] + rng.random_range(-8.0..8.0)).collect())
                    .collect()
            })
            .collect();
        inst.budget = rng.random_range(0.0..8.0);
        inst.risk_limit = if rng.random_bool(0.2) {
            f64::INFINITY
        } else {
            rng.random_range(0.0..15.0)
        };
        inst.beta = [0.5, 0.8, 0.9, 0.95][rng.random_range(0..4)];
        inst.exclusive = rng.random_bool(0.8);
        inst
    }

    #[test]
    fn matches_enumeration_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for t in 0..300 {
            let inst = random_instance(&mut rng);
            if inst.num_binaries() > 12 {
                continue;
            }
            let e = solve_enumeration(&inst).unwrap();
            for strategy in [SearchStrategy::NodeWise, SearchStrategy::HourWise] {
                let opts = BranchAndBoundOptions { strategy, ..Default::default() };
                let b = solve_branch_and_bound(&inst, &opts).unwrap();
                assert!(
                    (e.objective - b.objective).abs() < 1e-6,
                    "trial {t} {strategy:?}: enumeration {} vs bnb {}",
                    e.objective,
                    b.objective
                );
                assert!(b.evaluation.feasible());
                assert_eq!(b.stats.gap, 0.0);
            }
        }
    }

    #[test]
    fn no_margin_no_bids() {
        let c = CostSchedule::new(1.0, 1.0, 1.0, 1.0).unwrap();
        let inst = instance(vec![vec![0.5, -0.9, 1.0]], (0..3).map(flat_pwl).collect(), c);
        let r = solve_branch_and_bound(&inst, &BranchAndBoundOptions::default()).unwrap();
        assert_eq!(r.objective, 0.0);
        assert_eq!(r.decision.num_bids(), 0);
    }

    #[test]
    fn node_limit_returns_incumbent() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 6;
        let h = 4;
        let spreads: Vec<Vec<f64>> = (0..n).map(|_| (0..h).map(|_| rng.random_range(-5.0..5.0)).collect()).collect();
        let pwl = (0..h)
            .map(|hh| PwlSensitivity::linear(hh, -0.3, SensitivityBounds::new(-6.0, 6.0).unwrap()).unwrap())
            .collect();
        let mut inst = instance(spreads, pwl, CostSchedule::new(0.1, 0.1, 1.0, 1.0).unwrap());
        inst.samples = (0..h)
            .map(|hh| (0..20).map(|_| (0..n).map(|i| inst.expected_spread[i][hh] + rng.random_range(-10.0..10.0)).collect()).collect())
            .collect();
        inst.risk_limit = 5.0;
        match solve_branch_and_bound(&inst, &BranchAndBoundOptions { node_limit: 3, ..Default::default() }) {
            Err(PortfolioError::NodeLimit { incumbent, gap, .. }) => {
                assert!(incumbent.evaluation.feasible());
                assert!(gap >= 0.0);
            }
            Ok(r) => assert!(r.stats.nodes <= 3),
            Err(e) => panic!("{e}"),
        }
        let full = solve_branch_and_bound(&inst, &BranchAndBoundOptions::default()).unwrap();
        assert!(full.evaluation.feasible());
        assert!(realized_cvar_check(&inst, &full.decision).unwrap().0);
    }

    #[test]
    fn solver_output_passes_risk_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        for _ in 0..100 {
            let inst = random_instance(&mut rng);
            let r = solve_branch_and_bound(&inst, &BranchAndBoundOptions::default()).unwrap();
            assert!(realized_cvar_check(&inst, &r.decision).unwrap().0);
        }
    }

    #[test]
    fn budget_monotone() {
        let mut rng = ChaCha8Rng::seed_from_u64(34);
        for _ in 0..20 {
            let mut inst = random_instance(&mut rng);
            let mut last = f64::NEG_INFINITY;
            for b in 0..8 {
                inst.budget = b as f64;
                let r = solve_branch_and_bound(&inst, &BranchAndBoundOptions::default()).unwrap();
                assert!(r.objective >= last - 1e-9);
                last = r.objective;
            }
        }
    }

    #[test]
    fn larger_instance_solves() {
        let mut rng = ChaCha8Rng::seed_from_u64(35);
        let n = 5;
        let h = 24;
        let spreads: Vec<Vec<f64>> = (0..n).map(|_| (0..h).map(|_| rng.random_range(-4.0..4.0)).collect()).collect();
        let pwl = (0..h)
            .map(|hh| PwlSensitivity::linear(hh, -0.5, SensitivityBounds::new(-40.0, 40.0).unwrap()).unwrap())
            .collect();
        let mut inst = instance(spreads, pwl, CostSchedule::new(0.1, 0.1, 1.0, 1.0).unwrap());
        inst.samples = (0..h)
            .map(|hh| (0..30).map(|_| (0..n).map(|i| inst.expected_spread[i][hh] + rng.random_range(-10.0..10.0)).collect()).collect())
            .collect();
        inst.budget = 60.0;
        for c in [150.0, 20.0, 5.0] {
            inst.risk_limit = c;
            let r = solve_branch_and_bound(&inst, &BranchAndBoundOptions::default()).unwrap();
            assert!(r.evaluation.feasible());
            assert!(realized_cvar_check(&inst, &r.decision).unwrap().0);
            assert!(r.objective > 0.0);
        }
    }
}
