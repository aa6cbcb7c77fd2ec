//! Subcommand implementations.

use std::fs;
use std::ops::Range;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use chrono::NaiveDate;
use vbid_core::backtest::{
    anchored_curve, run_backtest, sensitivity_training_set, write_report, BacktestConfig, Scenario,
};
use vbid_core::config::KeyValues;
use vbid_core::gbt::{self, dump_ensemble};
use vbid_core::market::{
    generate_synthetic_market, load_features_csv, load_lmp_csv, load_market_dir, load_vbids_csv,
    write_market_dir, MarketData, SyntheticConfig, FEATURES_FILE, LMP_FILE, VBIDS_FILE,
};
use vbid_core::neural::{ModelBundle, QuantityForecaster, SpreadForecaster};
use vbid_core::portfolio::{
    build_problem, solve_branch_and_bound, BranchAndBoundOptions, PortfolioError,
    PortfolioInstance,
};
use vbid_core::seed::derive_seed;
use vbid_core::sensitivity::{read_pwl_csv, write_pwl_csv, PwlSensitivity, SensitivityBounds};

use crate::manifest::{verify, write_atomic, RunManifest, MANIFEST_FILE};
use crate::{Command, Common, DataArgs, UsageError};

const HOURS: usize = 24;
/// Records the reference node next to the three market CSVs.
const DATASET_FILE: &str = "dataset.txt";

pub fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Ingest {
            lmp,
            features,
            vbids,
            ref_node,
            out,
        } => ingest(&lmp, &features, &vbids, &ref_node, &out),
        Command::Synth {
            days,
            nodes,
            start,
            sensitivity_slope,
            seed,
            out,
        } => synth(days, nodes, &start, sensitivity_slope, seed, &out),
        Command::TrainSpread {
            common,
            data,
            model,
            end,
            out,
        } => train(Target::Spread, &common, &data, model, end, &out),
        Command::TrainQuantity {
            common,
            data,
            model,
            end,
            out,
        } => train(Target::Quantity, &common, &data, model, end, &out),
        Command::FitSensitivity {
            common,
            data,
            lmp,
            features,
            vbids,
            ref_node,
            date,
            quantity_model,
            pwl_out,
            out,
        } => {
            let source = match (data, lmp, features, vbids) {
                (Some(dir), None, None, None) => Source::Dir(DataArgs { data: dir, ref_node }),
                (None, Some(l), Some(f), Some(v)) => {
                    let Some(r) = ref_node else {
                        return Err(UsageError("--ref-node is required with --lmp".into()).into());
                    };
                    Source::Files(l, f, v, r)
                }
                _ => {
                    return Err(UsageError(
                        "give either --data or all of --lmp, --features and --vbids".into(),
                    )
                    .into())
                }
            };
            fit_sensitivity(&common, source, date, quantity_model, pwl_out, &out)
        }
        Command::Optimize {
            common,
            data,
            date,
            spread_model,
            pwl,
            budget,
            risk,
            beta,
            mode,
            out,
        } => optimize(OptimizeArgs {
            common,
            data,
            date,
            spread_model,
            pwl,
            budget,
            risk,
            beta,
            mode,
            out,
        }),
        Command::Backtest {
            common,
            data,
            scenario,
            workers,
            out,
        } => backtest(&common, &data, scenario, workers, &out),
        Command::Report { run } => report(&run),
    }
}

fn parse_date(s: &str) -> Result<NaiveDate> {
    NaiveDate::parse_from_str(s, "%Y-%m-%d")
        .map_err(|e| UsageError(format!("bad date `{s}`: {e}")).into())
}

/// Effective configuration: defaults, then the file, then flag overrides.
fn load_config(
    common: &Common,
    overrides: &[(&str, String)],
    manifest_inputs: &mut Vec<PathBuf>,
) -> Result<BacktestConfig> {
    let mut kv = match &common.config {
        Some(path) => {
            manifest_inputs.push(path.clone());
            KeyValues::load(path).with_context(|| format!("loading config {}", path.display()))?
        }
        None => KeyValues::default(),
    };
    for (k, v) in overrides {
        kv.insert(k, v);
    }
    Ok(BacktestConfig::from_key_values(&kv)?)
}

fn resolve_ref_node(args: &DataArgs) -> Result<String> {
    if let Some(r) = &args.ref_node {
        return Ok(r.clone());
    }
    let path = args.data.join(DATASET_FILE);
    let kv = KeyValues::load(&path).with_context(|| {
        format!("no --ref-node given and {} is unreadable", path.display())
    })?;
    kv.get_str("ref_node")
        .map(str::to_string)
        .with_context(|| format!("{} has no ref_node", path.display()))
}

fn load_data(args: &DataArgs, manifest_inputs: &mut Vec<PathBuf>) -> Result<MarketData> {
    let ref_node = resolve_ref_node(args)?;
    let data = load_market_dir(&args.data, &ref_node)
        .with_context(|| format!("loading market data from {}", args.data.display()))?;
    for f in [LMP_FILE, FEATURES_FILE, VBIDS_FILE] {
        manifest_inputs.push(args.data.join(f));
    }
    Ok(data)
}

fn day_start(data: &MarketData, date: NaiveDate) -> Result<usize> {
    let midnight = date.and_hms_opt(0, 0, 0).expect("midnight").and_utc();
    let t = data
        .panel
        .hour_index(&midnight)
        .with_context(|| format!("{date} is not in the data"))?;
    if t + HOURS > data.num_hours() {
        bail!("{date} is not a complete day in the data");
    }
    Ok(t)
}

/// Up to `train_days` whole days ending at hour `end`.
fn train_window(end: usize, train_days: usize) -> Result<Range<usize>> {
    if end < 2 * HOURS {
        bail!("fewer than two days of history before the requested date");
    }
    Ok(end.saturating_sub(train_days * HOURS)..end)
}

fn finish(
    command: &str,
    seed: u64,
    config_text: &str,
    inputs: &[PathBuf],
    manifest_path: &Path,
    outputs: &[PathBuf],
) -> Result<()> {
    let mut m = RunManifest::start(command, seed, config_text);
    for p in inputs {
        m.input(p);
    }
    m.finish(manifest_path, outputs)
}

fn file_manifest(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".manifest.txt");
    PathBuf::from(s)
}

fn write_dataset_file(out: &Path, ref_node: &str) -> Result<PathBuf> {
    let mut kv = KeyValues::default();
    kv.insert("ref_node", ref_node);
    let path = out.join(DATASET_FILE);
    write_atomic(&path, &kv.to_text())?;
    Ok(path)
}

fn market_outputs(out: &Path, dataset: PathBuf) -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = [LMP_FILE, FEATURES_FILE, VBIDS_FILE]
        .iter()
        .map(|f| out.join(f))
        .collect();
    v.push(dataset);
    v
}

fn ingest(lmp: &Path, features: &Path, vbids: &Path, ref_node: &str, out: &Path) -> Result<()> {
    let panel = load_lmp_csv(lmp, ref_node)?;
    let feats = load_features_csv(features)?;
    let vb = load_vbids_csv(vbids)?;
    let data = MarketData::new(panel, feats, vb)?;
    write_market_dir(&data, out)?;
    let dataset = write_dataset_file(out, ref_node)?;
    println!(
        "ingested {} nodes x {} hours into {}",
        data.panel.num_nodes(),
        data.num_hours(),
        out.display()
    );
    let inputs = [lmp.to_path_buf(), features.to_path_buf(), vbids.to_path_buf()];
    let text = format!("ref_node = {ref_node}\n");
    finish("ingest", 0, &text, &inputs, &out.join(MANIFEST_FILE), &market_outputs(out, dataset))
}

fn synth(days: usize, nodes: usize, start: &str, slope: f64, seed: u64, out: &Path) -> Result<()> {
    let cfg = SyntheticConfig {
        days,
        nodes,
        start: parse_date(start)?,
        sensitivity_slope: slope,
        ..SyntheticConfig::default()
    };
    let market = generate_synthetic_market(&cfg, seed)?;
    write_market_dir(&market.data, out)?;
    let dataset = write_dataset_file(out, &cfg.reference_node())?;
    println!("wrote {days} days x {nodes} nodes to {}", out.display());
    let text = format!("days = {days}\nnodes = {nodes}\nstart = {start}\nsensitivity_slope = {slope}\n");
    finish("synth", seed, &text, &[], &out.join(MANIFEST_FILE), &market_outputs(out, dataset))
}

enum Target {
    Spread,
    Quantity,
}

fn train(
    target: Target,
    common: &Common,
    data_args: &DataArgs,
    model: Option<String>,
    end: Option<String>,
    out: &Path,
) -> Result<()> {
    let mut inputs = Vec::new();
    let overrides: Vec<(&str, String)> = model.into_iter().map(|m| ("model", m)).collect();
    let cfg = load_config(common, &overrides, &mut inputs)?;
    let data = load_data(data_args, &mut inputs)?;
    let end = match end {
        Some(d) => day_start(&data, parse_date(&d)?)?,
        None => data.num_hours(),
    };
    let window = train_window(end, cfg.train_days)?;
    let mut hp = cfg.nn.clone();
    let (bundle, report, command) = match target {
        Target::Spread => {
            hp.seed = derive_seed(common.seed, "spread-forecast");
            let (f, reports) = SpreadForecaster::fit(cfg.model, &data, window.clone(), &hp, cfg.per_node)?;
            (ModelBundle::Spread(f), reports[0].clone(), "train-spread")
        }
        Target::Quantity => {
            hp.seed = derive_seed(common.seed, "quantity-forecast");
            let (f, r) = QuantityForecaster::fit(cfg.model, &data, window.clone(), &hp, Some(cfg.theta_quantity))?;
            (ModelBundle::Quantity(f), r, "train-quantity")
        }
    };
    bundle.save(out)?;
    println!(
        "{command}: {} hours, loss {} -> {} (best epoch {}), saved {}",
        window.len(),
        report.initial_loss,
        report.final_loss,
        report.best_epoch,
        out.display()
    );
    finish(
        command,
        common.seed,
        &cfg.to_key_values().to_text(),
        &inputs,
        &file_manifest(out),
        &[out.to_path_buf()],
    )
}

enum Source {
    Dir(DataArgs),
    Files(PathBuf, PathBuf, PathBuf, String),
}

fn fit_sensitivity(
    common: &Common,
    source: Source,
    date: Option<String>,
    quantity_model: Option<PathBuf>,
    pwl_out: Option<PathBuf>,
    out: &Path,
) -> Result<()> {
    let mut inputs = Vec::new();
    let cfg = load_config(common, &[], &mut inputs)?;
    let data = match source {
        Source::Dir(args) => load_data(&args, &mut inputs)?,
        Source::Files(l, f, v, r) => {
            let data = MarketData::new(load_lmp_csv(&l, &r)?, load_features_csv(&f)?, load_vbids_csv(&v)?)?;
            inputs.extend([l, f, v]);
            data
        }
    };
    let date = date.as_deref().map(parse_date).transpose()?;
    if pwl_out.is_some() && date.is_none() {
        return Err(UsageError("--pwl-out needs --date".into()).into());
    }
    let end = match date {
        Some(d) => day_start(&data, d)?,
        None => data.num_hours(),
    };
    let window = train_window(end, cfg.train_days)?;
    let (names, rows, targets) = sensitivity_training_set(&data, window.clone());
    let ensemble = gbt::fit(&names, &rows, &targets, &cfg.gbt)?;
    fs::write(out, dump_ensemble(&ensemble)).with_context(|| format!("writing {}", out.display()))?;
    let mut outputs = vec![out.to_path_buf()];

    if let Some(pwl_path) = pwl_out {
        let net: Vec<f64> = data.vbids[window].iter().map(|v| v.net_mwh()).collect();
        let bounds = SensitivityBounds::from_history(&net)?;
        let day = end..end + HOURS;
        let anchors = match &quantity_model {
            Some(p) => {
                inputs.push(p.clone());
                match ModelBundle::load(p)? {
                    ModelBundle::Quantity(q) => q.predict_vector(&data.features, day.clone())?,
                    ModelBundle::Spread(_) => bail!("{} is a spread model", p.display()),
                }
            }
            None => vec![0.0; HOURS],
        };
        let curves = day
            .zip(&anchors)
            .enumerate()
            .map(|(h, (t, y))| anchored_curve(&ensemble, &data.features.frames[t].values, *y, bounds, h))
            .collect::<Result<Vec<_>, _>>()?;
        let file = fs::File::create(&pwl_path).with_context(|| format!("creating {}", pwl_path.display()))?;
        write_pwl_csv(file, &curves)?;
        outputs.push(pwl_path);
    }
    println!("fit {} trees on {} rows, saved {}", ensemble.trees.len(), rows.len(), out.display());
    finish(
        "fit-sensitivity",
        common.seed,
        &cfg.to_key_values().to_text(),
        &inputs,
        &file_manifest(out),
        &outputs,
    )
}

struct OptimizeArgs {
    common: Common,
    data: DataArgs,
    date: String,
    spread_model: Option<PathBuf>,
    pwl: Option<PathBuf>,
    budget: f64,
    risk: Option<String>,
    beta: Option<f64>,
    mode: String,
    out: PathBuf,
}

fn optimize(a: OptimizeArgs) -> Result<()> {
    let mut inputs = Vec::new();
    let mut overrides = Vec::new();
    if let Some(b) = a.beta {
        overrides.push(("beta", b.to_string()));
    }
    let cfg = load_config(&a.common, &overrides, &mut inputs)?;
    let scenario: Scenario = a
        .mode
        .parse()
        .map_err(|_| UsageError(format!("unknown mode `{}`", a.mode)))?;
    let risk_limit = match a.risk.as_deref() {
        None => a.budget,
        Some("none") => f64::INFINITY,
        Some(s) => s
            .parse()
            .map_err(|_| UsageError(format!("bad --risk `{s}`")))?,
    };
    let data = load_data(&a.data, &mut inputs)?;
    let date = parse_date(&a.date)?;
    let start = day_start(&data, date)?;
    if start < cfg.sample_days * HOURS {
        bail!("{date} has fewer than {} days of history", cfg.sample_days);
    }
    let panel = &data.panel;
    let samples: Vec<Vec<Vec<f64>>> = (0..HOURS)
        .map(|h| {
            (1..=cfg.sample_days)
                .map(|back| panel.spread.iter().map(|s| s[start + h - back * HOURS]).collect())
                .collect()
        })
        .collect();

    let fitted: Option<Vec<PwlSensitivity>> = match &a.pwl {
        Some(p) => {
            inputs.push(p.clone());
            let file = fs::File::open(p).with_context(|| format!("opening {}", p.display()))?;
            let curves = read_pwl_csv(file)?;
            if curves.len() != HOURS {
                bail!("{} holds {} hourly curves, expected {HOURS}", p.display(), curves.len());
            }
            Some(curves)
        }
        None => None,
    };
    let pwl = match (&fitted, scenario.optimizes_with_shift()) {
        (Some(c), true) => c.clone(),
        (Some(c), false) => c.iter().map(|p| PwlSensitivity::flat(p.hour, p.bounds())).collect(),
        (None, _) => {
            let window = train_window(start, cfg.train_days)?;
            let net: Vec<f64> = data.vbids[window].iter().map(|v| v.net_mwh()).collect();
            let bounds = SensitivityBounds::from_history(&net)?;
            (0..HOURS).map(|h| PwlSensitivity::flat(h, bounds)).collect()
        }
    };
    let expected_spread = match &a.spread_model {
        Some(p) => {
            inputs.push(p.clone());
            match ModelBundle::load(p)? {
                ModelBundle::Spread(s) => s.predict_matrix(&data.features, start..start + HOURS)?,
                ModelBundle::Quantity(_) => bail!("{} is a quantity model", p.display()),
            }
        }
        None => (0..panel.num_nodes())
            .map(|i| {
                (0..HOURS)
                    .map(|h| samples[h].iter().map(|s| s[i]).sum::<f64>() / cfg.sample_days as f64)
                    .collect()
            })
            .collect(),
    };
    let instance = PortfolioInstance {
        nodes: panel.nodes.clone(),
        expected_spread,
        pwl,
        samples,
        costs: cfg.costs,
        budget: a.budget,
        risk_limit,
        beta: cfg.beta,
        y_forecast: vec![0.0; HOURS],
        exclusive: cfg.exclusive,
    };
    let options = BranchAndBoundOptions {
        node_limit: cfg.node_limit,
        ..BranchAndBoundOptions::default()
    };
    let (solution, complete) = match solve_branch_and_bound(&instance, &options) {
        Ok(s) => (s, true),
        Err(PortfolioError::NodeLimit { incumbent, gap, .. }) => {
            eprintln!("warning: node limit reached, reporting the incumbent (gap {gap})");
            (*incumbent, false)
        }
        Err(e) => return Err(e.into()),
    };

    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let mut decisions = String::from("hour,node_id,side,quantity_mwh\n");
    for (hour, node, side) in solution.decision.bids() {
        decisions.push_str(&format!(
            "{},{},{},1\n",
            vbid_core::market::format_hour(&panel.hours[start + hour]),
            panel.nodes[node],
            side.as_str()
        ));
    }
    let mut summary = KeyValues::default();
    summary.insert("date", date);
    summary.insert("mode", scenario);
    summary.insert("objective", solution.objective);
    summary.insert("bids", solution.decision.num_bids());
    summary.insert("collateral", solution.evaluation.collateral);
    summary.insert("total_cvar", solution.evaluation.total_cvar);
    summary.insert("budget_binding", solution.budget_binding);
    summary.insert("risk_binding", solution.risk_binding);
    summary.insert("solver", solution.stats.solver);
    summary.insert("search_nodes", solution.stats.nodes);
    summary.insert("gap", solution.stats.gap);
    summary.insert("complete", complete);
    let problem = build_problem(&instance)?.dump();
    let files = [
        ("decisions.csv", decisions),
        ("summary.txt", summary.to_text()),
        ("problem.txt", problem),
    ];
    let mut outputs = Vec::new();
    for (name, text) in &files {
        let p = a.out.join(name);
        write_atomic(&p, text)?;
        outputs.push(p);
    }
    println!(
        "{date}: {} bids, objective {}, collateral {}",
        solution.decision.num_bids(),
        solution.objective,
        solution.evaluation.collateral
    );
    let mut text = cfg.to_key_values();
    text.insert("cli_budget", a.budget);
    text.insert("cli_risk", risk_limit);
    text.insert("cli_mode", scenario);
    finish("optimize", a.common.seed, &text.to_text(), &inputs, &a.out.join(MANIFEST_FILE), &outputs)
}

fn backtest(
    common: &Common,
    data_args: &DataArgs,
    scenario: Option<String>,
    workers: usize,
    out: &Path,
) -> Result<()> {
    if workers == 0 {
        return Err(UsageError("--workers must be at least 1".into()).into());
    }
    let mut inputs = Vec::new();
    let overrides: Vec<(&str, String)> = scenario.into_iter().map(|s| ("scenario", s)).collect();
    let mut cfg = load_config(common, &overrides, &mut inputs)?;
    cfg.workers = workers;
    let data = load_data(data_args, &mut inputs)?;
    let report = run_backtest(&data, &cfg, common.seed)?;
    let names = write_report(&report, out)?;
    let config_text = cfg.to_key_values().to_text();
    let config_path = out.join("config.txt");
    write_atomic(&config_path, &config_text)?;
    let mut outputs: Vec<PathBuf> = names.iter().map(|n| out.join(n)).collect();
    outputs.push(config_path);
    println!(
        "{} {} days: net {} profit per dollar {}",
        report.scenario,
        report.days.len(),
        report.total_net(),
        report.profit_per_dollar
    );
    if !report.firewall_violations.is_empty() {
        eprintln!(
            "warning: {} look-ahead reads (first: {})",
            report.firewall_violations.len(),
            report.firewall_violations[0]
        );
    }
    finish("backtest", common.seed, &config_text, &inputs, &out.join(MANIFEST_FILE), &outputs)
}

fn report(run: &Path) -> Result<()> {
    let manifest = run.join(MANIFEST_FILE);
    let checked = verify(&manifest).with_context(|| format!("verifying {}", manifest.display()))?;
    println!("manifest ok: {checked} files verified");
    let metrics = run.join("metrics.txt");
    if metrics.is_file() {
        let kv = KeyValues::load(&metrics)?;
        for key in [
            "scenario",
            "seed",
            "test_days",
            "total_net",
            "profit_per_dollar",
            "spike_accuracy",
            "spike_rmse",
            "efficiency_non_increasing",
            "firewall_violations",
        ] {
            if let Some(v) = kv.get_str(key) {
                println!("{key} = {v}");
            }
        }
        for key in kv.keys().filter(|k| k.starts_with("sharpe_") || k.starts_with("mean_abs_spread_")) {
            println!("{key} = {}", kv.get_str(key).unwrap_or_default());
        }
    } else {
        for line in fs::read_to_string(run.join("summary.txt"))
            .with_context(|| format!("{} has neither metrics.txt nor summary.txt", run.display()))?
            .lines()
        {
            println!("{line}");
        }
    }
    Ok(())
}
