//! Training samples drawn from one or more hourly feature series.

use super::NnError;

/// `series[s][t]` is the feature row of hour `t` in series `s` (one series
/// per node for the shared spread model). Sample `k` predicts
/// `targets[k]` from `series[samples[k].0]` at hour `samples[k].1` and the
/// rows before it.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesDataset {
    pub series: Vec<Vec<Vec<f64>>>,
    pub samples: Vec<(usize, usize)>,
    pub targets: Vec<f64>,
}

impl SeriesDataset {
    /// One series; every row is a sample.
    pub fn from_rows(rows: Vec<Vec<f64>>, targets: Vec<f64>) -> Self {
        let samples = (0..rows.len()).map(|t| (0, t)).collect();
        Self {
            series: vec![rows],
            samples,
            targets,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.series
            .iter()
            .find_map(|s| s.first())
            .map_or(0, Vec::len)
    }

    pub fn validate(&self) -> Result<(), NnError> {
        if self.samples.is_empty() {
            return Err(NnError::EmptyDataset);
        }
        if self.samples.len() != self.targets.len() {
            return Err(NnError::ShapeMismatch(format!(
                "{} samples but {} targets",
                self.samples.len(),
                self.targets.len()
            )));
        }
        let dim = self.input_dim();
        if dim == 0 {
            return Err(NnError::ShapeMismatch("feature rows are empty".into()));
        }
        for (s, rows) in self.series.iter().enumerate() {
            if let Some(t) = rows.iter().position(|r| r.len() != dim) {
                return Err(NnError::ShapeMismatch(format!(
                    "series {s} hour {t} has {} features, expected {dim}",
                    rows[t].len()
                )));
            }
            if rows.iter().flatten().any(|v| !v.is_finite()) {
                return Err(NnError::ShapeMismatch(format!("series {s} has non-finite features")));
            }
        }
        for &(s, t) in &self.samples {
            if s >= self.series.len() || t >= self.series[s].len() {
                return Err(NnError::ShapeMismatch(format!("sample ({s}, {t}) is out of range")));
            }
        }
        if let Some(y) = self.targets.iter().find(|y| !(**y > 0.0 && **y < 1.0)) {
            return Err(NnError::ShapeMismatch(format!("target {y} is not sigmoid-scaled")));
        }
        Ok(())
    }

    /// Up to `len` rows ending at the sample's hour.
    pub fn window(&self, sample: usize, len: usize) -> Vec<&[f64]> {
        let (s, t) = self.samples[sample];
        let start = (t + 1).saturating_sub(len);
        self.series[s][start..=t].iter().map(Vec::as_slice).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn windows_are_clipped_at_series_start() {
        let rows: Vec<Vec<f64>> = (0..5).map(|t| vec![t as f64]).collect();
        let d = SeriesDataset::from_rows(rows, vec![0.5; 5]);
        assert!(d.validate().is_ok());
        let w = d.window(1, 3);
        assert_eq!(w, vec![&[0.0][..], &[1.0][..]]);
        let w = d.window(4, 3);
        assert_eq!(w, vec![&[2.0][..], &[3.0][..], &[4.0][..]]);
    }

    #[test]
    fn rejects_unscaled_targets() {
        let d = SeriesDataset::from_rows(vec![vec![1.0]], vec![1.5]);
        assert!(matches!(d.validate(), Err(NnError::ShapeMismatch(_))));
        let e = SeriesDataset::from_rows(vec![], vec![]);
        assert!(matches!(e.validate(), Err(NnError::EmptyDataset)));
    }
}
