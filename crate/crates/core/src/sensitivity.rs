//! Hourly piecewise-linear shift of the reference spread as a function of the
//! trader's own net virtual position, applied uniformly to every node.

use std::fmt;
use std::io::{Read, Write};

use thiserror::Error;

const CONTINUITY_TOL: f64 = 1e-9;
const BIG_M_FACTOR: f64 = 10.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SensitivityError {
    #[error("x = {x} outside domain [{lo}, {hi}]")]
    OutOfDomain { x: f64, lo: f64, hi: f64 },
    #[error("bounds [{lo}, {hi}] must satisfy lo < 0 < hi")]
    InvalidBounds { lo: f64, hi: f64 },
    #[error("invalid piecewise-linear model for hour {hour}: {violations}")]
    Invalid { hour: usize, violations: String },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Csv(#[from] CsvErrorWrapper),
}

#[derive(Debug, Error, Clone, PartialEq)]
#[error("{0}")]
pub struct CsvErrorWrapper(pub String);

impl From<csv::Error> for SensitivityError {
    fn from(e: csv::Error) -> Self {
        SensitivityError::Csv(CsvErrorWrapper(e.to_string()))
    }
}

/// Allowed range of the trader's net position in one hour, MWh.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensitivityBounds {
    pub x_lo: f64,
    pub x_hi: f64,
}

impl SensitivityBounds {
    pub fn new(x_lo: f64, x_hi: f64) -> Result<Self, SensitivityError> {
        if !(x_lo.is_finite() && x_hi.is_finite() && x_lo < 0.0 && 0.0 < x_hi) {
            return Err(SensitivityError::InvalidBounds { lo: x_lo, hi: x_hi });
        }
        Ok(Self { x_lo, x_hi })
    }

    /// Minimum and maximum of historical market-wide net quantities.
    pub fn from_history(net: &[f64]) -> Result<Self, SensitivityError> {
        let lo = net.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = net.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Self::new(lo, hi)
    }
}

/// One linear piece `shift(x) = slope * x + intercept` on `[start, next start)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PwlSegment {
    pub start: f64,
    pub slope: f64,
    pub intercept: f64,
}

impl PwlSegment {
    pub fn value(&self, x: f64) -> f64 {
        self.slope * x + self.intercept
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    NoSegments,
    BadDomain,
    FirstStart,
    Unordered(usize),
    PositiveSlope(usize),
    Continuity(usize),
    ZeroAnchor(f64),
    NonFinite(usize),
    BigM,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::NoSegments => write!(f, "no segments"),
            Violation::BadDomain => write!(f, "domain must satisfy x_lo < 0 < x_hi"),
            Violation::FirstStart => write!(f, "first segment must start at x_lo"),
            Violation::Unordered(j) => write!(f, "segment starts not increasing at {j}"),
            Violation::PositiveSlope(j) => write!(f, "positive slope at {j}"),
            Violation::Continuity(j) => write!(f, "continuity broken at boundary {j}"),
            Violation::ZeroAnchor(v) => write!(f, "shift at 0 is {v}, expected 0"),
            Violation::NonFinite(j) => write!(f, "non-finite coefficient at {j}"),
            Violation::BigM => write!(f, "big-M does not dominate the domain"),
        }
    }
}

/// Piecewise-linear spread shift for one hour.
#[derive(Debug, Clone, PartialEq)]
pub struct PwlSensitivity {
    pub hour: usize,
    pub segments: Vec<PwlSegment>,
    pub x_lo: f64,
    pub x_hi: f64,
    pub big_m: f64,
}

impl PwlSensitivity {
    /// Builds and validates a model; `big_m` is derived from the domain.
    pub fn new(
        hour: usize,
        segments: Vec<PwlSegment>,
        x_lo: f64,
        x_hi: f64,
    ) -> Result<Self, SensitivityError> {
        let mut pwl = Self {
            hour,
            segments,
            x_lo,
            x_hi,
            big_m: 0.0,
        };
        pwl.big_m = pwl.default_big_m();
        pwl.check()?;
        Ok(pwl)
    }

    /// Zero shift everywhere.
    pub fn flat(hour: usize, bounds: SensitivityBounds) -> Self {
        let mut pwl = Self {
            hour,
            segments: vec![PwlSegment {
                start: bounds.x_lo,
                slope: 0.0,
                intercept: 0.0,
            }],
            x_lo: bounds.x_lo,
            x_hi: bounds.x_hi,
            big_m: 0.0,
        };
        pwl.big_m = pwl.default_big_m();
        pwl
    }

    /// Single segment through the origin.
    pub fn linear(hour: usize, slope: f64, bounds: SensitivityBounds) -> Result<Self, SensitivityError> {
        Self::new(
            hour,
            vec![PwlSegment {
                start: bounds.x_lo,
                slope,
                intercept: 0.0,
            }],
            bounds.x_lo,
            bounds.x_hi,
        )
    }

    /// Continuous interpolant through `knots` (x strictly increasing), extended
    /// flat to the domain ends and re-based so that the shift at 0 is 0.
    /// Collinear neighbours are merged.
    pub fn from_knots(
        hour: usize,
        knots: &[(f64, f64)],
        bounds: SensitivityBounds,
    ) -> Result<Self, SensitivityError> {
        let (lo, hi) = (bounds.x_lo, bounds.x_hi);
        let inner: Vec<(f64, f64)> = knots
            .iter()
            .copied()
            .filter(|(x, _)| *x > lo && *x < hi)
            .collect();
        let mut segs: Vec<PwlSegment> = Vec::new();
        if inner.is_empty() {
            segs.push(PwlSegment {
                start: lo,
                slope: 0.0,
                intercept: 0.0,
            });
        } else {
            segs.push(PwlSegment {
                start: lo,
                slope: 0.0,
                intercept: inner[0].1,
            });
            for w in inner.windows(2) {
                let (x0, y0) = w[0];
                let (x1, y1) = w[1];
                let slope = (y1 - y0) / (x1 - x0);
                segs.push(PwlSegment {
                    start: x0,
                    slope,
                    intercept: y0 - slope * x0,
                });
            }
            let last = inner[inner.len() - 1];
            segs.push(PwlSegment {
                start: last.0,
                slope: 0.0,
                intercept: last.1,
            });
        }
        let mut merged: Vec<PwlSegment> = Vec::with_capacity(segs.len());
        for s in segs {
            match merged.last() {
                Some(prev) if prev.slope == s.slope && prev.intercept == s.intercept => {}
                _ => merged.push(s),
            }
        }
        let mut pwl = Self {
            hour,
            segments: merged,
            x_lo: lo,
            x_hi: hi,
            big_m: 0.0,
        };
        let anchor = pwl.shift_unchecked(0.0);
        for s in &mut pwl.segments {
            s.intercept -= anchor;
        }
        // Re-basing can leave rounding noise at the boundaries; snap the
        // intercepts to restore continuity relative to the anchor segment.
        pwl.restore_continuity();
        pwl.big_m = pwl.default_big_m();
        pwl.check()?;
        Ok(pwl)
    }

    fn restore_continuity(&mut self) {
        let j0 = self.segment_index_unchecked(0.0);
        for j in j0 + 1..self.segments.len() {
            let c = self.segments[j].start;
            let left = self.segments[j - 1].value(c);
            self.segments[j].intercept = left - self.segments[j].slope * c;
        }
        for j in (0..j0).rev() {
            let c = self.segments[j + 1].start;
            let right = self.segments[j + 1].value(c);
            self.segments[j].intercept = right - self.segments[j].slope * c;
        }
    }

    fn check(&self) -> Result<(), SensitivityError> {
        let v = self.validate();
        if v.is_empty() {
            Ok(())
        } else {
            Err(SensitivityError::Invalid {
                hour: self.hour,
                violations: v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("; "),
            })
        }
    }

    pub fn bounds(&self) -> SensitivityBounds {
        SensitivityBounds {
            x_lo: self.x_lo,
            x_hi: self.x_hi,
        }
    }

    pub fn num_segments(&self) -> usize {
        self.segments.len()
    }

    /// End of segment `j` (start of `j + 1`, or `x_hi`).
    pub fn segment_end(&self, j: usize) -> f64 {
        self.segments.get(j + 1).map_or(self.x_hi, |s| s.start)
    }

    fn segment_index_unchecked(&self, x: f64) -> usize {
        // Half-open [c_j, c_{j+1}); the last segment also owns x_hi.
        self.segments
            .partition_point(|s| s.start <= x)
            .saturating_sub(1)
    }

    /// Index of the unique active segment at `x`.
    pub fn active_segment(&self, x: f64) -> Result<usize, SensitivityError> {
        self.check_domain(x)?;
        Ok(self.segment_index_unchecked(x))
    }

    fn check_domain(&self, x: f64) -> Result<(), SensitivityError> {
        if x >= self.x_lo && x <= self.x_hi {
            Ok(())
        } else {
            Err(SensitivityError::OutOfDomain {
                x,
                lo: self.x_lo,
                hi: self.x_hi,
            })
        }
    }

    fn shift_unchecked(&self, x: f64) -> f64 {
        self.segments[self.segment_index_unchecked(x)].value(x)
    }

    pub fn shift_at(&self, x: f64) -> Result<f64, SensitivityError> {
        self.check_domain(x)?;
        Ok(self.shift_unchecked(x))
    }

    /// Nodal spread after the trader's position: base plus the reference shift.
    pub fn shifted_nodal_spread(&self, base_spread: f64, x: f64) -> Result<f64, SensitivityError> {
        Ok(base_spread + self.shift_at(x)?)
    }

    /// Largest |shift| on the domain; extremes of a piecewise-linear function
    /// sit at segment ends.
    pub fn max_abs_shift(&self) -> f64 {
        let mut m = 0.0f64;
        for (j, s) in self.segments.iter().enumerate() {
            m = m.max(s.value(s.start).abs()).max(s.value(self.segment_end(j)).abs());
        }
        m
    }

    /// Largest `|a_j x^2 + b_j x|` over every segment's quadratic and the
    /// whole domain, so that inactive-interval slack rows stay satisfiable.
    pub fn max_abs_quadratic(&self) -> f64 {
        let mut m = 0.0f64;
        for s in &self.segments {
            let q = |x: f64| (s.slope * x * x + s.intercept * x).abs();
            m = m.max(q(self.x_lo)).max(q(self.x_hi));
            if s.slope != 0.0 {
                let v = -s.intercept / (2.0 * s.slope);
                if v > self.x_lo && v < self.x_hi {
                    m = m.max(q(v));
                }
            }
        }
        m
    }

    fn big_m_floor(&self) -> f64 {
        self.x_lo
            .abs()
            .max(self.x_hi.abs())
            .max(self.max_abs_shift())
            .max(self.max_abs_quadratic())
    }

    pub fn default_big_m(&self) -> f64 {
        BIG_M_FACTOR * self.big_m_floor()
    }

    /// Every broken invariant; empty iff the model is valid.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        if self.segments.is_empty() {
            out.push(Violation::NoSegments);
            return out;
        }
        if !(self.x_lo < 0.0 && 0.0 < self.x_hi && self.x_lo.is_finite() && self.x_hi.is_finite())
        {
            out.push(Violation::BadDomain);
        }
        if self.segments[0].start != self.x_lo {
            out.push(Violation::FirstStart);
        }
        for (j, s) in self.segments.iter().enumerate() {
            if !(s.start.is_finite() && s.slope.is_finite() && s.intercept.is_finite()) {
                out.push(Violation::NonFinite(j));
            }
            if s.slope > 0.0 {
                out.push(Violation::PositiveSlope(j));
            }
            if j > 0 {
                let prev = &self.segments[j - 1];
                if !(s.start > prev.start) || s.start >= self.x_hi {
                    out.push(Violation::Unordered(j));
                }
                let l = prev.value(s.start);
                let r = s.value(s.start);
                if (l - r).abs() > CONTINUITY_TOL * l.abs().max(r.abs()).max(1.0) {
                    out.push(Violation::Continuity(j));
                }
            }
        }
        if self.x_lo < 0.0 && 0.0 < self.x_hi {
            let z = self.shift_unchecked(0.0);
            if z != 0.0 {
                out.push(Violation::ZeroAnchor(z));
            }
        }
        if !(self.big_m >= self.big_m_floor()) {
            out.push(Violation::BigM);
        }
        out
    }
}

pub const PWL_HEADER: [&str; 5] = ["hour", "j", "c", "a", "b"];

/// Writes `hour,j,c,a,b` rows plus one `hour,bounds,x_lo,x_hi,big_m` row per model.
pub fn write_pwl_csv<W: Write>(writer: W, models: &[PwlSensitivity]) -> Result<(), SensitivityError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(PWL_HEADER)?;
    for m in models {
        for (j, s) in m.segments.iter().enumerate() {
            w.write_record([
                m.hour.to_string(),
                j.to_string(),
                s.start.to_string(),
                s.slope.to_string(),
                s.intercept.to_string(),
            ])?;
        }
        w.write_record([
            m.hour.to_string(),
            "bounds".to_string(),
            m.x_lo.to_string(),
            m.x_hi.to_string(),
            m.big_m.to_string(),
        ])?;
    }
    w.flush().map_err(|e| SensitivityError::Csv(CsvErrorWrapper(e.to_string())))?;
    Ok(())
}

pub fn read_pwl_csv<R: Read>(reader: R) -> Result<Vec<PwlSensitivity>, SensitivityError> {
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != PWL_HEADER {
        return Err(SensitivityError::Parse {
            line: 1,
            message: format!("expected header {}", PWL_HEADER.join(",")),
        });
    }
    let mut out = Vec::new();
    let mut segs: Vec<PwlSegment> = Vec::new();
    let mut current: Option<usize> = None;
    for (i, rec) in r.records().enumerate() {
        let line = i + 2;
        let rec = rec?;
        let parse = |k: usize| -> Result<f64, SensitivityError> {
            rec.get(k)
                .and_then(|s| s.parse::<f64>().ok())
                .ok_or_else(|| SensitivityError::Parse {
                    line,
                    message: format!("bad number in column {}", PWL_HEADER[k]),
                })
        };
        let hour: usize = rec
            .get(0)
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| SensitivityError::Parse {
                line,
                message: "bad hour".into(),
            })?;
        if current.is_some_and(|h| h != hour) {
            return Err(SensitivityError::Parse {
                line,
                message: "segments of the previous hour lack a bounds row".into(),
            });
        }
        current = Some(hour);
        if rec.get(1) == Some("bounds") {
            let (x_lo, x_hi, big_m) = (parse(2)?, parse(3)?, parse(4)?);
            let m = PwlSensitivity {
                hour,
                segments: std::mem::take(&mut segs),
                x_lo,
                x_hi,
                big_m,
            };
            m.check()?;
            out.push(m);
            current = None;
        } else {
            segs.push(PwlSegment {
                start: parse(2)?,
                slope: parse(3)?,
                intercept: parse(4)?,
            });
        }
    }
    if !segs.is_empty() {
        return Err(SensitivityError::Parse {
            line: 0,
            message: "trailing segments without a bounds row".into(),
        });
    }
    Ok(out)
}
