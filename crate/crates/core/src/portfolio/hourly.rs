//! Branch-and-bound over whole-hour portfolios.
//!
//! When an hour has few enough nodes, every INC/DEC pattern of the hour is
//! listed with its exact objective, collateral and CVaR. The search then
//! picks one pattern per hour. Hours interact only through the budget and
//! the summed CVaR, so the bound dualizes the risk row with a multiplier
//! `mu` and relaxes the budget to a lot count; the remaining multiple-choice
//! problem is solved exactly by a max-plus table over lots.

use super::{
    empirical_cvar, hour_losses, PortfolioDecision, PortfolioError, PortfolioInstance,
    SolutionReport, SolverStats, FEASIBILITY_TOL,
};

/// Largest number of patterns per hour for which this search is used.
pub(crate) const MAX_HOUR_PATTERNS: u64 = 6561;
const DOMINANCE_LIMIT: usize = 729;
const PRUNE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy)]
struct Pattern {
    code: u64,
    objective: f64,
    collateral: f64,
    cvar: f64,
    lots: usize,
}

pub(crate) fn patterns_per_hour(instance: &PortfolioInstance) -> Option<u64> {
    let radix: u64 = if instance.exclusive { 3 } else { 4 };
    radix.checked_pow(instance.num_nodes() as u32)
}

fn set_hour(d: &mut PortfolioDecision, h: usize, mut code: u64, radix: u64) {
    for i in 0..d.num_nodes() {
        let s = code % radix;
        code /= radix;
        d.inc[i][h] = s == 1 || s == 3;
        d.dec[i][h] = s == 2 || s == 3;
    }
}

fn hour_patterns(inst: &PortfolioInstance, h: usize) -> Vec<Pattern> {
    let n = inst.num_nodes();
    let radix: u64 = if inst.exclusive { 3 } else { 4 };
    let total = radix.pow(n as u32);
    let mut d = PortfolioDecision::empty(n, inst.num_hours());
    let mut out = Vec::new();
    for code in 0..total {
        set_hour(&mut d, h, code, radix);
        let x = d.net_position(h) as f64;
        let Ok(j) = inst.pwl[h].active_segment(x) else {
            continue;
        };
        let seg = &inst.pwl[h].segments[j];
        let mut objective = seg.slope * x * x + seg.intercept * x;
        let mut collateral = 0.0;
        let mut lots = 0;
        for i in 0..n {
            if d.inc[i][h] {
                objective += inst.lot_value(i, h, super::Side::Inc);
                collateral += inst.costs.prox_inc;
                lots += 1;
            }
            if d.dec[i][h] {
                objective += inst.lot_value(i, h, super::Side::Dec);
                collateral += inst.costs.prox_dec;
                lots += 1;
            }
        }
        let cvar = empirical_cvar(&hour_losses(inst, &d, h), inst.beta)
            .expect("validated samples")
            .cvar;
        out.push(Pattern {
            code,
            objective,
            collateral,
            cvar,
            lots,
        });
    }
    if out.len() <= DOMINANCE_LIMIT {
        out = remove_dominated(out);
    }
    out
}

/// Drops patterns that another pattern matches or beats on every count;
/// among exact duplicates the first survives.
fn remove_dominated(p: Vec<Pattern>) -> Vec<Pattern> {
    let dominates = |a: &Pattern, b: &Pattern| {
        a.objective >= b.objective
            && a.collateral <= b.collateral
            && a.cvar <= b.cvar
            && a.lots <= b.lots
    };
    let keep: Vec<bool> = (0..p.len())
        .map(|k| {
            !(0..p.len()).any(|o| {
                o != k
                    && dominates(&p[o], &p[k])
                    && (!dominates(&p[k], &p[o]) || o < k)
            })
        })
        .collect();
    p.into_iter().zip(keep).filter(|(_, k)| *k).map(|(p, _)| p).collect()
}

struct Multiplier {
    mu: f64,
    /// `suffix[h][l]`: best `objective - mu * cvar` of hours `h..` within `l` lots.
    suffix: Vec<Vec<f64>>,
}

struct Search<'a> {
    inst: &'a PortfolioInstance,
    patterns: Vec<Vec<Pattern>>,
    lot_cap: usize,
    min_prox: f64,
    /// Smallest achievable CVaR sum of hours `h..`.
    min_cvar_suffix: Vec<f64>,
    multipliers: Vec<Multiplier>,
    chosen: Vec<u64>,
    best: (f64, Vec<u64>),
    nodes: u64,
    node_limit: u64,
    aborted: bool,
}

impl<'a> Search<'a> {
    fn lots_allowed(&self, collateral: f64) -> Option<usize> {
        if collateral > self.inst.budget + FEASIBILITY_TOL {
            return None;
        }
        if self.min_prox <= 0.0 {
            return Some(self.lot_cap);
        }
        let room = ((self.inst.budget - collateral + FEASIBILITY_TOL) / self.min_prox).floor();
        Some(room.clamp(0.0, self.lot_cap as f64) as usize)
    }

    fn multiplier(&self, mu: f64) -> Multiplier {
        let hours = self.patterns.len();
        let mut suffix = vec![vec![0.0; self.lot_cap + 1]; hours + 1];
        for h in (0..hours).rev() {
            let max_lots = self.patterns[h].iter().map(|p| p.lots).max().unwrap_or(0);
            let mut table = vec![f64::NEG_INFINITY; max_lots + 1];
            for p in &self.patterns[h] {
                let v = p.objective - mu * p.cvar;
                if v > table[p.lots] {
                    table[p.lots] = v;
                }
            }
            for l in 1..table.len() {
                table[l] = table[l].max(table[l - 1]);
            }
            for l in 0..=self.lot_cap {
                let mut best = f64::NEG_INFINITY;
                for (used, t) in table.iter().enumerate().take(l + 1) {
                    best = best.max(t + suffix[h + 1][l - used]);
                }
                suffix[h][l] = best;
            }
        }
        Multiplier { mu, suffix }
    }

    fn dual_bound(&self, m: &Multiplier, hour: usize, objective: f64, cvar: f64, lots: usize) -> f64 {
        let mut b = objective + m.suffix[hour][lots];
        if m.mu > 0.0 {
            b += m.mu * (self.inst.risk_limit - cvar);
        }
        b
    }

    fn bound(&self, hour: usize, objective: f64, cvar: f64, collateral: f64) -> f64 {
        let Some(lots) = self.lots_allowed(collateral) else {
            return f64::NEG_INFINITY;
        };
        if cvar + self.min_cvar_suffix[hour] > self.inst.risk_limit + FEASIBILITY_TOL {
            return f64::NEG_INFINITY;
        }
        self.multipliers
            .iter()
            .map(|m| self.dual_bound(m, hour, objective, cvar, lots))
            .fold(f64::INFINITY, f64::min)
    }

    fn explore(&mut self, hour: usize, objective: f64, cvar: f64, collateral: f64) {
        if hour == self.patterns.len() {
            if cvar <= self.inst.risk_limit + FEASIBILITY_TOL && objective > self.best.0 {
                self.best = (objective, self.chosen.clone());
            }
            return;
        }
        let mut children: Vec<(f64, usize)> = self.patterns[hour]
            .iter()
            .enumerate()
            .map(|(k, p)| {
                let b = self.bound(
                    hour + 1,
                    objective + p.objective,
                    cvar + p.cvar,
                    collateral + p.collateral,
                );
                (b, k)
            })
            .collect();
        children.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        for (b, k) in children {
            if self.aborted || b <= self.best.0 + PRUNE_TOL {
                break;
            }
            self.nodes += 1;
            if self.nodes > self.node_limit {
                self.aborted = true;
                break;
            }
            let p = self.patterns[hour][k];
            self.chosen[hour] = p.code;
            self.explore(
                hour + 1,
                objective + p.objective,
                cvar + p.cvar,
                collateral + p.collateral,
            );
        }
    }
}

fn root_dual(search: &Search<'_>, mu: f64) -> f64 {
    let m = search.multiplier(mu);
    let lots = search.lots_allowed(0.0).unwrap_or(0);
    search.dual_bound(&m, 0, 0.0, 0.0, lots)
}

/// Minimizes the convex root dual over `mu >= 0`.
fn best_multiplier(search: &Search<'_>) -> f64 {
    let f0 = root_dual(search, 0.0);
    let mut hi = 1.0;
    let mut steps = 0;
    while root_dual(search, hi) < root_dual(search, hi / 2.0) && steps < 40 {
        hi *= 2.0;
        steps += 1;
    }
    let (mut a, mut b) = (0.0f64, hi);
    let r = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let (mut fc, mut fd) = (root_dual(search, c), root_dual(search, d));
    for _ in 0..50 {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = root_dual(search, c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = root_dual(search, d);
        }
    }
    let mu = 0.5 * (a + b);
    if root_dual(search, mu) < f0 {
        mu
    } else {
        0.0
    }
}

pub(crate) fn solve_hourly(
    inst: &PortfolioInstance,
    start: (f64, PortfolioDecision),
    node_limit: u64,
) -> Result<SolutionReport, PortfolioError> {
    let hours = inst.num_hours();
    let radix: u64 = if inst.exclusive { 3 } else { 4 };
    let patterns: Vec<Vec<Pattern>> = (0..hours).map(|h| hour_patterns(inst, h)).collect();
    let mut min_cvar_suffix = vec![0.0; hours + 1];
    for h in (0..hours).rev() {
        let m = patterns[h].iter().map(|p| p.cvar).fold(f64::INFINITY, f64::min);
        min_cvar_suffix[h] = min_cvar_suffix[h + 1] + m;
    }
    let lot_cap = patterns
        .iter()
        .map(|ps| ps.iter().map(|p| p.lots).max().unwrap_or(0))
        .sum();
    let start_codes: Vec<u64> = (0..hours)
        .map(|h| {
            (0..inst.num_nodes()).rev().fold(0u64, |acc, i| {
                let s = match (start.1.inc[i][h], start.1.dec[i][h]) {
                    (false, false) => 0,
                    (true, false) => 1,
                    (false, true) => 2,
                    (true, true) => 3,
                };
                acc * radix + s
            })
        })
        .collect();
    let mut search = Search {
        inst,
        patterns,
        lot_cap,
        min_prox: inst.costs.prox_inc.min(inst.costs.prox_dec),
        min_cvar_suffix,
        multipliers: Vec::new(),
        chosen: vec![0; hours],
        best: (start.0, start_codes),
        nodes: 0,
        node_limit,
        aborted: false,
    };
    let zero = search.multiplier(0.0);
    search.multipliers.push(zero);
    if inst.risk_limit.is_finite() {
        let mu = best_multiplier(&search);
        if mu > 0.0 {
            for k in [0.5, 0.8, 1.0, 1.25, 2.0] {
                let m = search.multiplier(mu * k);
                search.multipliers.push(m);
            }
        }
    }
    let root_bound = search.bound(0, 0.0, 0.0, 0.0);
    if root_bound > search.best.0 + PRUNE_TOL {
        search.explore(0, 0.0, 0.0, 0.0);
    }
    let mut decision = PortfolioDecision::empty(inst.num_nodes(), hours);
    for (h, code) in search.best.1.iter().enumerate() {
        set_hour(&mut decision, h, *code, radix);
    }
    let gap = if search.aborted {
        (root_bound - search.best.0).max(0.0)
    } else {
        0.0
    };
    let report = SolutionReport::new(
        inst,
        decision,
        SolverStats {
            solver: "branch-and-bound",
            nodes: search.nodes,
            gap,
        },
    );
    if search.aborted {
        return Err(PortfolioError::NodeLimit {
            limit: node_limit,
            gap,
            incumbent: Box::new(report),
        });
    }
    Ok(report)
}
