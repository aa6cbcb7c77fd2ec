//! CSV readers and writers for `lmp.csv`, `features.csv` and `vbids.csv`.
//!
//! Floats are written with Rust's shortest round-trip formatting so a
//! write/read cycle reproduces every value bit for bit.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use chrono::{NaiveDateTime, TimeZone, Utc};

use super::{
    check_whole_hour, FeatureFrame, FeatureSet, Hour, MarketData, MarketError,
    MarketVirtualQuantity, SpreadPanel,
};

pub const LMP_FILE: &str = "lmp.csv";
pub const FEATURES_FILE: &str = "features.csv";
pub const VBIDS_FILE: &str = "vbids.csv";

const HOUR_FORMAT: &str = "%Y-%m-%dT%H:%M:%SZ";

/// Parses `YYYY-MM-DDTHH:00:00Z`.
pub fn parse_hour(s: &str) -> Result<Hour, MarketError> {
    let naive = NaiveDateTime::parse_from_str(s.trim(), HOUR_FORMAT).map_err(|e| {
        MarketError::Parse {
            line: 0,
            message: format!("bad timestamp `{s}`: {e}"),
        }
    })?;
    let h = Utc.from_utc_datetime(&naive);
    check_whole_hour(&h)?;
    Ok(h)
}

pub fn format_hour(h: &Hour) -> String {
    h.format(HOUR_FORMAT).to_string()
}

fn open(path: &Path) -> Result<File, MarketError> {
    File::open(path).map_err(|source| MarketError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn create(path: &Path) -> Result<File, MarketError> {
    File::create(path).map_err(|source| MarketError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> MarketError + '_ {
    move |source| MarketError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn csv_reader<R: Read>(r: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(r)
}

fn check_header(
    rdr: &mut csv::Reader<impl Read>,
    expected_prefix: &[&str],
) -> Result<Vec<String>, MarketError> {
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| MarketError::Parse {
            line: 1,
            message: e.to_string(),
        })?
        .iter()
        .map(str::to_string)
        .collect();
    let ok = header.len() >= expected_prefix.len()
        && header.iter().zip(expected_prefix).all(|(a, b)| a == b);
    if !ok {
        return Err(MarketError::Parse {
            line: 1,
            message: format!(
                "expected header starting with `{}`, found `{}`",
                expected_prefix.join(","),
                header.join(",")
            ),
        });
    }
    Ok(header)
}

fn parse_f64(field: &str, line: usize, what: &str) -> Result<f64, MarketError> {
    let v: f64 = field.parse().map_err(|_| MarketError::Parse {
        line,
        message: format!("bad {what} `{field}`"),
    })?;
    if !v.is_finite() {
        return Err(MarketError::Parse {
            line,
            message: format!("non-finite {what} `{field}`"),
        });
    }
    Ok(v)
}

fn parse_hour_at(field: &str, line: usize) -> Result<Hour, MarketError> {
    parse_hour(field).map_err(|e| match e {
        MarketError::Parse { message, .. } => MarketError::Parse { line, message },
        MarketError::Inconsistent(message) => MarketError::Parse { line, message },
        other => other,
    })
}

/// Reads an `hour,node_id,da_lmp,rt_lmp` table into a dense panel.
pub fn read_lmp<R: Read>(reader: R, ref_node: &str) -> Result<SpreadPanel, MarketError> {
    let mut rdr = csv_reader(reader);
    let header = check_header(&mut rdr, &["hour", "node_id", "da_lmp", "rt_lmp"])?;
    if header.len() != 4 {
        return Err(MarketError::Parse {
            line: 1,
            message: "lmp.csv must have exactly four columns".into(),
        });
    }
    let mut cells: BTreeMap<(Hour, String), (f64, f64)> = BTreeMap::new();
    let mut nodes = BTreeSet::new();
    let mut hours = BTreeSet::new();
    for (idx, rec) in rdr.records().enumerate() {
        let line = idx + 2;
        let rec = rec.map_err(|e| MarketError::Parse {
            line,
            message: e.to_string(),
        })?;
        if rec.len() != 4 {
            return Err(MarketError::Parse {
                line,
                message: format!("expected 4 fields, found {}", rec.len()),
            });
        }
        let hour = parse_hour_at(&rec[0], line)?;
        let node = rec[1].to_string();
        if node.is_empty() {
            return Err(MarketError::Parse {
                line,
                message: "empty node_id".into(),
            });
        }
        let da = parse_f64(&rec[2], line, "da_lmp")?;
        let rt = parse_f64(&rec[3], line, "rt_lmp")?;
        if cells.insert((hour, node.clone()), (da, rt)).is_some() {
            return Err(MarketError::DuplicateRow {
                node,
                hour: format_hour(&hour),
            });
        }
        nodes.insert(node);
        hours.insert(hour);
    }
    let nodes: Vec<String> = nodes.into_iter().collect();
    let hours: Vec<Hour> = hours.into_iter().collect();
    if !nodes.iter().any(|n| n == ref_node) {
        return Err(MarketError::NoReferenceNode(ref_node.to_string()));
    }
    let mut da = vec![Vec::with_capacity(hours.len()); nodes.len()];
    let mut rt = vec![Vec::with_capacity(hours.len()); nodes.len()];
    for h in &hours {
        for (i, n) in nodes.iter().enumerate() {
            let (d, r) = cells
                .get(&(*h, n.clone()))
                .ok_or_else(|| MarketError::MissingCell {
                    node: n.clone(),
                    hour: format_hour(h),
                })?;
            da[i].push(*d);
            rt[i].push(*r);
        }
    }
    SpreadPanel::new(nodes, hours, da, rt, ref_node)
}

pub fn load_lmp_csv(path: &Path, ref_node: &str) -> Result<SpreadPanel, MarketError> {
    read_lmp(open(path)?, ref_node)
}

/// Writes rows sorted by (hour, node).
pub fn write_lmp_csv(panel: &SpreadPanel, path: &Path) -> Result<(), MarketError> {
    let mut out = std::io::BufWriter::new(create(path)?);
    let err = io_err(path);
    writeln!(out, "hour,node_id,da_lmp,rt_lmp").map_err(&err)?;
    for (h, hour) in panel.hours.iter().enumerate() {
        let hs = format_hour(hour);
        for (i, node) in panel.nodes.iter().enumerate() {
            writeln!(out, "{hs},{node},{},{}", panel.da[i][h], panel.rt[i][h]).map_err(&err)?;
        }
    }
    out.flush().map_err(&err)
}

pub fn read_features<R: Read>(reader: R) -> Result<FeatureSet, MarketError> {
    let mut rdr = csv_reader(reader);
    let header = check_header(&mut rdr, &["hour"])?;
    let names: Vec<String> = header[1..].to_vec();
    let mut frames = Vec::new();
    for (idx, rec) in rdr.records().enumerate() {
        let line = idx + 2;
        let rec = rec.map_err(|e| MarketError::Parse {
            line,
            message: e.to_string(),
        })?;
        if rec.len() != names.len() + 1 {
            return Err(MarketError::Parse {
                line,
                message: format!("expected {} fields, found {}", names.len() + 1, rec.len()),
            });
        }
        let hour = parse_hour_at(&rec[0], line)?;
        let values = rec
            .iter()
            .skip(1)
            .zip(&names)
            .map(|(f, n)| parse_f64(f, line, n))
            .collect::<Result<Vec<_>, _>>()?;
        frames.push(FeatureFrame { hour, values });
    }
    frames.sort_by_key(|f| f.hour);
    if frames.windows(2).any(|w| w[0].hour == w[1].hour) {
        return Err(MarketError::Inconsistent(
            "duplicate hour in features".into(),
        ));
    }
    FeatureSet::new(names, frames)
}

pub fn load_features_csv(path: &Path) -> Result<FeatureSet, MarketError> {
    read_features(open(path)?)
}

pub fn write_features_csv(features: &FeatureSet, path: &Path) -> Result<(), MarketError> {
    let mut out = std::io::BufWriter::new(create(path)?);
    let err = io_err(path);
    writeln!(out, "hour,{}", features.names.join(",")).map_err(&err)?;
    for f in &features.frames {
        write!(out, "{}", format_hour(&f.hour)).map_err(&err)?;
        for v in &f.values {
            write!(out, ",{v}").map_err(&err)?;
        }
        writeln!(out).map_err(&err)?;
    }
    out.flush().map_err(&err)
}

pub fn read_vbids<R: Read>(reader: R) -> Result<Vec<MarketVirtualQuantity>, MarketError> {
    let mut rdr = csv_reader(reader);
    check_header(&mut rdr, &["hour", "inc_cleared_mwh", "dec_cleared_mwh"])?;
    let mut out = Vec::new();
    for (idx, rec) in rdr.records().enumerate() {
        let line = idx + 2;
        let rec = rec.map_err(|e| MarketError::Parse {
            line,
            message: e.to_string(),
        })?;
        if rec.len() != 3 {
            return Err(MarketError::Parse {
                line,
                message: format!("expected 3 fields, found {}", rec.len()),
            });
        }
        let hour = parse_hour_at(&rec[0], line)?;
        let inc = parse_f64(&rec[1], line, "inc_cleared_mwh")?;
        let dec = parse_f64(&rec[2], line, "dec_cleared_mwh")?;
        out.push(MarketVirtualQuantity::new(hour, inc, dec).map_err(|e| {
            MarketError::Parse {
                line,
                message: e.to_string(),
            }
        })?);
    }
    out.sort_by_key(|v| v.hour);
    if out.windows(2).any(|w| w[0].hour == w[1].hour) {
        return Err(MarketError::Inconsistent("duplicate hour in vbids".into()));
    }
    Ok(out)
}

pub fn load_vbids_csv(path: &Path) -> Result<Vec<MarketVirtualQuantity>, MarketError> {
    read_vbids(open(path)?)
}

pub fn write_vbids_csv(vbids: &[MarketVirtualQuantity], path: &Path) -> Result<(), MarketError> {
    let mut out = std::io::BufWriter::new(create(path)?);
    let err = io_err(path);
    writeln!(out, "hour,inc_cleared_mwh,dec_cleared_mwh").map_err(&err)?;
    for v in vbids {
        writeln!(
            out,
            "{},{},{}",
            format_hour(&v.hour),
            v.inc_cleared_mwh,
            v.dec_cleared_mwh
        )
        .map_err(&err)?;
    }
    out.flush().map_err(&err)
}

/// Loads `lmp.csv`, `features.csv` and `vbids.csv` from one directory.
pub fn load_market_dir(dir: &Path, ref_node: &str) -> Result<MarketData, MarketError> {
    let panel = load_lmp_csv(&dir.join(LMP_FILE), ref_node)?;
    let features = load_features_csv(&dir.join(FEATURES_FILE))?;
    let vbids = load_vbids_csv(&dir.join(VBIDS_FILE))?;
    MarketData::new(panel, features, vbids)
}

pub fn write_market_dir(data: &MarketData, dir: &Path) -> Result<(), MarketError> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    write_lmp_csv(&data.panel, &dir.join(LMP_FILE))?;
    write_features_csv(&data.features, &dir.join(FEATURES_FILE))?;
    write_vbids_csv(&data.vbids, &dir.join(VBIDS_FILE))
}
