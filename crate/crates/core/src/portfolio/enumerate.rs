//! Exhaustive oracle over all binary assignments.

use std::cmp::Ordering;

use super::{
    min_f_beta, PortfolioDecision, PortfolioError, PortfolioInstance, SolutionReport,
    SolverStats, FEASIBILITY_TOL,
};

pub const MAX_ENUMERATION_BINARIES: usize = 24;

/// Node-hour states in enumeration order.
const STATES: [(bool, bool); 4] = [(false, false), (true, false), (false, true), (true, true)];

#[derive(Clone)]
struct Candidate {
    key: i64,
    bids: usize,
    flat: Vec<u8>,
    decision: PortfolioDecision,
}

impl Candidate {
    /// Larger objective (on a 1e-9 grid), then fewer bids, then the
    /// lexicographically larger flattened `z`, so earlier nodes win.
    fn better_than(&self, other: &Candidate) -> bool {
        match self.key.cmp(&other.key) {
            Ordering::Greater => true,
            Ordering::Less => false,
            Ordering::Equal => match other.bids.cmp(&self.bids) {
                Ordering::Greater => true,
                Ordering::Less => false,
                Ordering::Equal => self.flat > other.flat,
            },
        }
    }
}

fn check_size(instance: &PortfolioInstance) -> Result<(), PortfolioError> {
    instance.validate()?;
    let count = instance.num_binaries();
    if count > MAX_ENUMERATION_BINARIES {
        return Err(PortfolioError::TooManyBinaries {
            count,
            limit: MAX_ENUMERATION_BINARIES,
        });
    }
    Ok(())
}

fn decode(instance: &PortfolioInstance, mut code: u64, radix: u64) -> PortfolioDecision {
    let (n, hours) = (instance.num_nodes(), instance.num_hours());
    let mut d = PortfolioDecision::empty(n, hours);
    for h in 0..hours {
        for i in 0..n {
            let (inc, dec) = STATES[(code % radix) as usize];
            code /= radix;
            d.inc[i][h] = inc;
            d.dec[i][h] = dec;
        }
    }
    d
}

/// Objective and feasibility from the slack construction: `v = a x^2 + b x`
/// on every interval, `w = v` on the active one, alpha minimizing the
/// sampled tail objective.
fn score(instance: &PortfolioInstance, d: &PortfolioDecision) -> Result<Option<f64>, PortfolioError> {
    let costs = &instance.costs;
    let mut collateral = 0.0;
    let mut objective = 0.0;
    let mut risk = 0.0;
    for h in 0..instance.num_hours() {
        let mut x = 0i64;
        for i in 0..instance.num_nodes() {
            let e = instance.expected_spread[i][h];
            if d.inc[i][h] {
                x += 1;
                objective += e - costs.gamma_inc;
                collateral += costs.prox_inc;
            }
            if d.dec[i][h] {
                x -= 1;
                objective += -e - costs.gamma_dec;
                collateral += costs.prox_dec;
            }
        }
        let pwl = &instance.pwl[h];
        let xf = x as f64;
        if xf < pwl.x_lo || xf > pwl.x_hi {
            return Ok(None);
        }
        let j = pwl.active_segment(xf)?;
        let seg = &pwl.segments[j];
        objective += seg.slope * xf * xf + seg.intercept * xf;

        let losses: Vec<f64> = instance.samples[h]
            .iter()
            .map(|s| {
                let mut f = 0.0;
                for i in 0..instance.num_nodes() {
                    if d.inc[i][h] {
                        f -= s[i] - costs.gamma_inc;
                    }
                    if d.dec[i][h] {
                        f -= -s[i] - costs.gamma_dec;
                    }
                }
                f
            })
            .collect();
        risk += min_f_beta(&losses, instance.beta)?.1;
    }
    if collateral > instance.budget + FEASIBILITY_TOL || risk > instance.risk_limit + FEASIBILITY_TOL {
        return Ok(None);
    }
    Ok(Some(objective))
}

fn scan(
    instance: &PortfolioInstance,
    range: std::ops::Range<u64>,
    radix: u64,
) -> Result<Option<Candidate>, PortfolioError> {
    let mut best: Option<Candidate> = None;
    for code in range {
        let d = decode(instance, code, radix);
        let Some(obj) = score(instance, &d)? else {
            continue;
        };
        let cand = Candidate {
            key: (obj * 1e9).round() as i64,
            bids: d.num_bids(),
            flat: d.flat(),
            decision: d,
        };
        if best.as_ref().is_none_or(|b| cand.better_than(b)) {
            best = Some(cand);
        }
    }
    Ok(best)
}

fn radix_and_total(instance: &PortfolioInstance) -> (u64, u64) {
    let radix = if instance.exclusive { 3 } else { 4 };
    let cells = (instance.num_nodes() * instance.num_hours()) as u32;
    (radix, radix.pow(cells))
}

fn finish(
    instance: &PortfolioInstance,
    best: Option<Candidate>,
    total: u64,
) -> Result<SolutionReport, PortfolioError> {
    let best = best.ok_or(PortfolioError::Infeasible)?;
    Ok(SolutionReport::new(
        instance,
        best.decision,
        SolverStats {
            solver: "enumeration",
            nodes: total,
            gap: 0.0,
        },
    ))
}

pub fn solve_enumeration(instance: &PortfolioInstance) -> Result<SolutionReport, PortfolioError> {
    check_size(instance)?;
    let (radix, total) = radix_and_total(instance);
    let best = scan(instance, 0..total, radix)?;
    finish(instance, best, total)
}

/// Same result as [`solve_enumeration`]; the code space is split into
/// contiguous chunks and the chunk winners reduced in chunk order.
pub fn solve_enumeration_parallel(
    instance: &PortfolioInstance,
    workers: usize,
) -> Result<SolutionReport, PortfolioError> {
    check_size(instance)?;
    let (radix, total) = radix_and_total(instance);
    let workers = workers.max(1) as u64;
    let chunk = total.div_ceil(workers);
    let results: Vec<Result<Option<Candidate>, PortfolioError>> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..workers)
            .map(|w| {
                let lo = (w * chunk).min(total);
                let hi = ((w + 1) * chunk).min(total);
                s.spawn(move || scan(instance, lo..hi, radix))
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("enumeration worker panicked")).collect()
    });
    let mut best: Option<Candidate> = None;
    for r in results {
        if let Some(c) = r? {
            if best.as_ref().is_none_or(|b| c.better_than(b)) {
                best = Some(c);
            }
        }
    }
    finish(instance, best, total)
}
