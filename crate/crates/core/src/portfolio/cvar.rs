//! Empirical value-at-risk and conditional value-at-risk of sampled losses.

use super::PortfolioError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TailRisk {
    pub var: f64,
    pub cvar: f64,
}

fn check(losses: &[f64], beta: f64) -> Result<(), PortfolioError> {
    if losses.is_empty() {
        return Err(PortfolioError::EmptyLosses);
    }
    if !(beta > 0.0 && beta < 1.0) {
        return Err(PortfolioError::InvalidBeta(beta));
    }
    Ok(())
}

/// VaR is the smallest sample loss whose empirical CDF reaches `beta`. CVaR
/// is the mean of the worst `(1 - beta)` probability mass of the sample, the
/// boundary atom entering with its fractional weight.
pub fn empirical_cvar(losses: &[f64], beta: f64) -> Result<TailRisk, PortfolioError> {
    check(losses, beta)?;
    let n = losses.len();
    let mut sorted = losses.to_vec();
    sorted.sort_by(f64::total_cmp);
    // k / n >= beta, with a little slack so that e.g. beta = 0.9, n = 10
    // selects k = 9 despite rounding in 0.9 * 10.
    let k = (1..=n)
        .find(|k| *k as f64 >= beta * n as f64 - 1e-9)
        .unwrap_or(n);
    let var = sorted[k - 1];

    let tail_mass = (1.0 - beta) * n as f64;
    let mut remaining = tail_mass;
    let mut acc = 0.0;
    for l in sorted.iter().rev() {
        if remaining <= 0.0 {
            break;
        }
        let w = remaining.min(1.0);
        acc += w * l;
        remaining -= w;
    }
    Ok(TailRisk {
        var,
        cvar: acc / tail_mass,
    })
}

/// `alpha + sum((loss - alpha)^+) / ((1 - beta) * n)`.
pub fn f_beta(losses: &[f64], alpha: f64, beta: f64) -> f64 {
    let excess: f64 = losses.iter().map(|l| (l - alpha).max(0.0)).sum();
    alpha + excess / ((1.0 - beta) * losses.len() as f64)
}

/// Minimum of [`f_beta`] over `alpha`, searched over the sample losses (the
/// function is convex and piecewise linear with kinks only there). Returns
/// the minimizing alpha (smallest on ties) and the minimum.
pub fn min_f_beta(losses: &[f64], beta: f64) -> Result<(f64, f64), PortfolioError> {
    check(losses, beta)?;
    let mut best = (f64::NAN, f64::INFINITY);
    for &a in losses {
        let v = f_beta(losses, a, beta);
        if v < best.1 || (v == best.1 && a < best.0) {
            best = (a, v);
        }
    }
    Ok(best)
}

/// Weights `q_k` with `0 <= q_k <= 1 / ((1 - beta) n)` and `sum q_k = 1`
/// that put the tail mass on the largest losses. For any other loss vector
/// `L`, `sum q_k L_k` is a lower bound on its CVaR.
pub fn tail_weights(losses: &[f64], beta: f64) -> Vec<f64> {
    let n = losses.len();
    let cap = 1.0 / ((1.0 - beta) * n as f64);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| losses[b].total_cmp(&losses[a]).then(a.cmp(&b)));
    let mut q = vec![0.0; n];
    let mut left = 1.0f64;
    for i in order {
        if left <= 0.0 {
            break;
        }
        let w = cap.min(left);
        q[i] = w;
        left -= w;
    }
    q
}
