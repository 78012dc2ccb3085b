use std::collections::BTreeMap;
use std::fs::File;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::Variant;
use super::train::{read_summary, RunSummary, DENSITY_FILE, HEATMAP_FILE, METRICS_FILE};
use crate::env::VisitDensity;
use crate::error::{Error, Result};

/// Median of the finite values; `None` if there are none.
pub fn median(values: &[f64]) -> Option<f64> {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 { v[m] } else { 0.5 * (v[m - 1] + v[m]) })
}

/// Ranks starting at 1, ties sharing their average rank.
pub fn ranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut out = vec![0.0; values.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = rank;
        }
        i = j + 1;
    }
    out
}

fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    (sxx > 0.0 && syy > 0.0).then(|| sxy / (sxx * syy).sqrt())
}

/// Spearman rank correlation. `None` for fewer than two points, unequal
/// lengths, non-finite input, or a constant series.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 || !x.iter().chain(y).all(|v| v.is_finite()) {
        return None;
    }
    pearson(&ranks(x), &ranks(y))
}

/// Means over consecutive non-overlapping windows; a short tail is dropped.
pub fn window_means(values: &[f64], window: usize) -> Vec<f64> {
    if window == 0 {
        return Vec::new();
    }
    values
        .chunks_exact(window)
        .map(|c| c.iter().sum::<f64>() / window as f64)
        .collect()
}

/// Writes `density.png` next to a run's `density.csv` and returns the
/// number of distinct cells visited.
pub fn plot_density(run_dir: &Path) -> Result<(PathBuf, usize)> {
    let density = VisitDensity::read_csv(run_dir.join(DENSITY_FILE))?;
    let out = run_dir.join(HEATMAP_FILE);
    density.write_heatmap(&out)?;
    Ok((out, density.coverage()))
}

/// A run's metrics file as named numeric columns.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsTable {
    pub columns: Vec<String>,
    /// `rows[i][j]` is column `j` of row `i`; empty cells are NaN.
    pub rows: Vec<Vec<f64>>,
}

impl MetricsTable {
    pub fn read(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut reader = csv::Reader::from_reader(file);
        let columns: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
        let mut rows = Vec::new();
        for record in reader.records() {
            let record = record?;
            let row = record
                .iter()
                .map(|cell| {
                    if cell.is_empty() {
                        Ok(f64::NAN)
                    } else {
                        cell.parse::<f64>()
                            .map_err(|_| Error::Config(format!("{}: non-numeric cell {cell:?}", path.display())))
                    }
                })
                .collect::<Result<Vec<f64>>>()?;
            rows.push(row);
        }
        Ok(MetricsTable { columns, rows })
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let j = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r[j]).collect())
    }
}

/// One run as seen by [`compare_runs`].
#[derive(Debug, Clone)]
pub struct RunLog {
    pub dir: PathBuf,
    pub summary: RunSummary,
    pub metrics: MetricsTable,
}

impl RunLog {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        let summary = read_summary(&dir)?;
        let metrics = MetricsTable::read(&dir.join(METRICS_FILE))?;
        if metrics.rows.is_empty() {
            return Err(Error::Config(format!("{}: metrics log is empty", dir.display())));
        }
        Ok(RunLog { dir, summary, metrics })
    }
}

/// Per-variant medians of a run's final numbers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantSummary {
    pub variant: Variant,
    pub runs: usize,
    pub median_coverage: f64,
    pub median_success_rate: Option<f64>,
    pub median_final_entropy: Option<f64>,
    pub median_final_alpha: Option<f64>,
}

/// Output of [`compare_runs`].
#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub variants: Vec<VariantSummary>,
    /// Header of [`series`](Self::series).
    pub columns: Vec<String>,
    /// Per update: medians across seeds of every metric for every
    /// variant, the max-min spread across seeds, and the difference from
    /// the first variant.
    pub series: Vec<Vec<f64>>,
}

impl Comparison {
    pub fn variant(&self, v: Variant) -> Option<&VariantSummary> {
        self.variants.iter().find(|s| s.variant == v)
    }

    pub fn write_series_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(&self.columns)?;
        for row in &self.series {
            w.write_record(row.iter().map(|v| if v.is_nan() { String::new() } else { v.to_string() }))?;
        }
        w.flush().map_err(|e| Error::io("<compare output>", e))
    }

    pub fn write_variants_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for v in &self.variants {
            w.serialize(v)?;
        }
        w.flush().map_err(|e| Error::io("<compare output>", e))
    }
}

/// Lines up runs by update index and reduces them per variant.
///
/// Needs at least two logs with identical metric columns. Series are
/// truncated to the shortest log.
pub fn compare_runs(logs: &[RunLog]) -> Result<Comparison> {
    if logs.len() < 2 {
        return Err(Error::invalid("compare needs at least two run logs"));
    }
    let columns = &logs[0].metrics.columns;
    for log in &logs[1..] {
        if &log.metrics.columns != columns {
            return Err(Error::Config(format!(
                "{} has columns incompatible with {}",
                log.dir.display(),
                logs[0].dir.display()
            )));
        }
    }
    let Some(update_col) = columns.iter().position(|c| c == "update") else {
        return Err(Error::Config("metrics log has no update column".into()));
    };
    let len = logs.iter().map(|l| l.metrics.rows.len()).min().unwrap_or(0);

    let mut groups: BTreeMap<Variant, Vec<&RunLog>> = BTreeMap::new();
    for log in logs {
        groups.entry(log.summary.variant).or_default().push(log);
    }

    let metric_cols: Vec<usize> = (0..columns.len()).filter(|&j| j != update_col).collect();
    let mut header = vec!["update".to_string()];
    for v in groups.keys() {
        for &j in &metric_cols {
            header.push(format!("{}/{}", v.name(), columns[j]));
            header.push(format!("{}/{}/spread", v.name(), columns[j]));
        }
    }
    let first = *groups.keys().next().expect("at least one variant");
    for v in groups.keys().skip(1) {
        for &j in &metric_cols {
            header.push(format!("{}-{}/{}", v.name(), first.name(), columns[j]));
        }
    }

    let mut series = Vec::with_capacity(len);
    for i in 0..len {
        let mut row = vec![logs[0].metrics.rows[i][update_col]];
        let mut medians: BTreeMap<Variant, Vec<f64>> = BTreeMap::new();
        for (v, runs) in &groups {
            for &j in &metric_cols {
                let vals: Vec<f64> = runs.iter().map(|r| r.metrics.rows[i][j]).collect();
                let finite: Vec<f64> = vals.iter().copied().filter(|x| x.is_finite()).collect();
                let m = median(&vals).unwrap_or(f64::NAN);
                let spread = if finite.is_empty() {
                    f64::NAN
                } else {
                    finite.iter().copied().fold(f64::NEG_INFINITY, f64::max)
                        - finite.iter().copied().fold(f64::INFINITY, f64::min)
                };
                row.push(m);
                row.push(spread);
                medians.entry(*v).or_default().push(m);
            }
        }
        let base = medians[&first].clone();
        for v in groups.keys().skip(1) {
            row.extend(medians[v].iter().zip(&base).map(|(a, b)| a - b));
        }
        series.push(row);
    }

    let variants = groups
        .iter()
        .map(|(v, runs)| {
            let pick = |f: &dyn Fn(&RunSummary) -> Option<f64>| {
                median(&runs.iter().filter_map(|r| f(&r.summary)).collect::<Vec<_>>())
            };
            VariantSummary {
                variant: *v,
                runs: runs.len(),
                median_coverage: pick(&|s| Some(s.coverage as f64)).unwrap_or(f64::NAN),
                median_success_rate: pick(&|s| s.success_rate_last_100),
                median_final_entropy: pick(&|s| Some(s.final_mean_entropy)),
                median_final_alpha: pick(&|s| Some(s.final_mean_alpha)),
            }
        })
        .collect();
    Ok(Comparison {
        variants,
        columns: header,
        series,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn median_examples() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), Some(2.5));
        assert_eq!(median(&[f64::NAN, 5.0]), Some(5.0));
        assert_eq!(median(&[]), None);
    }

    #[test]
    fn ranks_average_ties() {
        assert_eq!(ranks(&[10.0, 20.0, 10.0, 5.0]), vec![2.5, 4.0, 2.5, 1.0]);
    }

    #[test]
    fn spearman_examples() {
        let x = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(spearman(&x, &[1.0, 4.0, 9.0, 16.0, 25.0]), Some(1.0));
        assert_eq!(spearman(&x, &[5.0, 4.0, 3.0, 2.0, 1.0]), Some(-1.0));
        // Textbook: d = (0, 0, 1, -1, 0) gives 1 - 6*2/(5*24) = 0.9.
        let r = spearman(&x, &[1.0, 2.0, 4.0, 3.0, 5.0]).unwrap();
        assert!((r - 0.9).abs() < 1e-12);
        assert_eq!(spearman(&x, &[1.0; 5]), None);
        assert_eq!(spearman(&[1.0], &[1.0]), None);
    }

    #[test]
    fn window_means_drop_tail() {
        assert_eq!(window_means(&[1.0, 3.0, 5.0, 7.0, 9.0], 2), vec![2.0, 6.0]);
        assert!(window_means(&[1.0], 0).is_empty());
    }

    proptest! {
        #[test]
        fn spearman_is_invariant_under_monotone_maps(xs in proptest::collection::vec(-100.0f64..100.0, 3..40)) {
            let ys: Vec<f64> = xs.iter().map(|x| (x * 0.1).sin()).collect();
            let cubed: Vec<f64> = xs.iter().map(|x| x.powi(3) + 7.0).collect();
            let a = spearman(&xs, &ys);
            let b = spearman(&cubed, &ys);
            prop_assert_eq!(a.is_some(), b.is_some());
            if let (Some(a), Some(b)) = (a, b) {
                prop_assert!((a - b).abs() < 1e-12);
                prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&a));
            }
        }
    }
}
