//! Record of realized-data reads, checked for look-ahead.
//!
//! Exogenous features are forecasts available before the day-ahead auction
//! and are not logged. Realized spreads and cleared virtual quantities are.

use crate::market::{format_hour, Hour};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DataAccess {
    pub purpose: &'static str,
    /// First hour of the day (or period) the read informs.
    pub decision_hour: usize,
    /// Half-open range of hours read.
    pub first_hour: usize,
    pub end_hour: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AccessLog {
    pub entries: Vec<DataAccess>,
}

impl AccessLog {
    pub fn record(&mut self, purpose: &'static str, decision_hour: usize, first_hour: usize, end_hour: usize) {
        self.entries.push(DataAccess {
            purpose,
            decision_hour,
            first_hour,
            end_hour,
        });
    }

    pub fn extend(&mut self, other: AccessLog) {
        self.entries.extend(other.entries);
    }

    /// One message per read that reaches the hour it informs.
    pub fn violations(&self, hours: &[Hour]) -> Vec<String> {
        let stamp = |h: usize| {
            hours
                .get(h)
                .map(format_hour)
                .unwrap_or_else(|| format!("hour {h}"))
        };
        self.entries
            .iter()
            .filter(|a| a.end_hour > a.decision_hour)
            .map(|a| {
                format!(
                    "{} for {} reads data up to {}",
                    a.purpose,
                    stamp(a.decision_hour),
                    stamp(a.end_hour - 1)
                )
            })
            .collect()
    }
}
