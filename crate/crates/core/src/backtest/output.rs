//! Report files: `pnl.csv`, `metrics.txt`, `curves.csv`, `ledger.csv` and
//! whitespace-separated `.dat` series for plotting.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{BacktestError, BacktestReport};

/// `date,gross,net,collateral,cvar`, one row per test day.
pub fn pnl_csv(report: &BacktestReport) -> String {
    let mut s = String::from("date,gross,net,collateral,cvar\n");
    for d in &report.days {
        let _ = writeln!(s, "{},{},{},{},{}", d.date, d.gross, d.net, d.collateral, d.cvar);
    }
    s
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "na".to_string(), |x| x.to_string())
}

/// Flat `key = value` summary. Contains no timing information, so equal
/// runs produce equal text.
pub fn metrics_text(report: &BacktestReport) -> String {
    let mut s = String::new();
    let mut kv = |k: &str, v: String| {
        let _ = writeln!(s, "{k} = {v}");
    };
    kv("scenario", report.scenario.to_string());
    kv("seed", report.seed.to_string());
    kv("test_days", report.days.len().to_string());
    if let (Some(a), Some(b)) = (report.days.first(), report.days.last()) {
        kv("first_date", a.date.to_string());
        kv("last_date", b.date.to_string());
    }
    kv("total_gross", report.days.iter().map(|d| d.gross).sum::<f64>().to_string());
    kv("total_fees", report.days.iter().map(|d| d.fees).sum::<f64>().to_string());
    kv("total_net", report.total_net().to_string());
    kv("bids", report.days.iter().map(|d| d.ledger.len()).sum::<usize>().to_string());
    kv("mean_budget", report.mean_budget().to_string());
    kv("mean_risk_limit", report.mean_risk_limit().to_string());
    kv("profit_per_dollar", report.profit_per_dollar.to_string());
    kv("node_limit_days", report.node_limit_days.to_string());
    kv("spike_accuracy", opt(report.spike.map(|m| m.accuracy)));
    kv("spike_rmse", opt(report.spike.map(|m| m.rmse)));
    kv("spike_points", report.spike.map_or("0".into(), |m| m.points.to_string()));
    for row in &report.convergence {
        kv(&format!("mean_abs_spread_{}_without", row.year), row.without_bidding.to_string());
        kv(&format!("mean_abs_spread_{}_with", row.year), row.with_bidding.to_string());
    }
    for (year, sharpe) in &report.sharpe_by_year {
        kv(&format!("sharpe_{year}"), opt(*sharpe));
    }
    for (k, p) in report.periods.iter().enumerate() {
        kv(&format!("period_{k}_start"), p.start.to_string());
        kv(&format!("period_{k}_days"), p.days.to_string());
        kv(&format!("period_{k}_spread_loss"), opt(p.spread_loss));
        kv(&format!("period_{k}_quantity_loss"), opt(p.quantity_loss));
        kv(&format!("period_{k}_sensitivity_trees"), p.sensitivity_trees.to_string());
    }
    kv(
        "efficiency_non_increasing",
        report
            .efficiency_non_increasing()
            .map_or("na".into(), |b| b.to_string()),
    );
    kv("firewall_violations", report.firewall_violations.len().to_string());
    s
}

fn curves_csv(report: &BacktestReport) -> String {
    let mut s = String::from("share,profit_per_dollar,sharpe\n");
    for p in &report.efficiency {
        let _ = writeln!(s, "{},{},{}", p.share, p.profit_per_dollar, opt(p.sharpe));
    }
    s
}

fn ledger_csv(report: &BacktestReport) -> String {
    let mut s = String::from("date,node,hour,side,realized_spread,shift,gross,fees,net\n");
    for d in &report.days {
        for e in &d.ledger {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{}",
                d.date,
                e.node,
                e.hour,
                e.side.as_str(),
                e.realized_spread,
                e.shift,
                e.gross,
                e.fees,
                e.net
            );
        }
    }
    s
}

fn write_atomic(path: &Path, text: &str) -> Result<(), BacktestError> {
    let io = |source| BacktestError::Io {
        path: path.display().to_string(),
        source,
    };
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, text).map_err(io)?;
    fs::rename(&tmp, path).map_err(io)
}

/// Writes all report files into `dir`, creating it if needed. Returns the
/// file names written.
pub fn write_report(report: &BacktestReport, dir: &Path) -> Result<Vec<String>, BacktestError> {
    fs::create_dir_all(dir).map_err(|source| BacktestError::Io {
        path: dir.display().to_string(),
        source,
    })?;
    let mut cumulative = String::from("# day cumulative_net\n");
    for (k, v) in report.cumulative_net.iter().enumerate() {
        let _ = writeln!(cumulative, "{k} {v}");
    }
    let mut convergence = String::from("# year without_bidding with_bidding\n");
    for r in &report.convergence {
        let _ = writeln!(convergence, "{} {} {}", r.year, r.without_bidding, r.with_bidding);
    }
    let mut efficiency = String::from("# share profit_per_dollar sharpe\n");
    for p in &report.efficiency {
        let _ = writeln!(efficiency, "{} {} {}", p.share, p.profit_per_dollar, opt(p.sharpe));
    }
    let files = [
        ("pnl.csv", pnl_csv(report)),
        ("metrics.txt", metrics_text(report)),
        ("curves.csv", curves_csv(report)),
        ("ledger.csv", ledger_csv(report)),
        ("cumulative_net.dat", cumulative),
        ("convergence.dat", convergence),
        ("efficiency.dat", efficiency),
    ];
    for (name, text) in &files {
        write_atomic(&dir.join(name), text)?;
    }
    Ok(files.iter().map(|(n, _)| n.to_string()).collect())
}
