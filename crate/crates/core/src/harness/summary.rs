//! Cross-seed aggregation of metrics CSVs.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use statrs::distribution::{ContinuousCDF, StudentsT};

use super::{HarnessError, IterationRecord};

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub iteration: usize,
    pub seeds: usize,
    pub success_mean: f64,
    pub success_half_width: f64,
    pub reward_mean: f64,
    pub reward_half_width: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellSummary {
    pub name: String,
    pub rows: Vec<SummaryRow>,
    /// First iteration reaching the threshold, per seed (in input order).
    pub iterations_to_threshold: Vec<Option<usize>>,
    /// Median of the above, counting never-reached as infinite.
    pub median_iterations_to_threshold: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub threshold: f64,
    pub cells: Vec<CellSummary>,
}

impl Summary {
    pub fn cell(&self, name: &str) -> Option<&CellSummary> {
        self.cells.iter().find(|c| c.name == name)
    }
}

/// File stem without its `_seed<N>` suffix.
pub fn cell_name(path: &Path) -> String {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    match stem.rfind("_seed") {
        Some(i) if stem[i + 5..].chars().all(|c| c.is_ascii_digit()) && i + 5 < stem.len() => stem[..i].to_string(),
        _ => stem,
    }
}

pub fn load_records(path: &Path) -> Result<Vec<IterationRecord>, HarnessError> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<Result<Vec<IterationRecord>, _>>()?)
}

/// 95% two-sided Student-t half-width of the mean; 0 for fewer than two values.
pub fn t_half_width(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let t = StudentsT::new(0.0, 1.0, (n - 1) as f64)
        .expect("positive degrees of freedom")
        .inverse_cdf(0.975);
    t * (var / n as f64).sqrt()
}

/// First iteration whose success rate reaches `threshold`.
pub fn iterations_to(records: &[IterationRecord], threshold: f64) -> Option<usize> {
    records.iter().find(|r| r.success_rate >= threshold).map(|r| r.iteration)
}

/// Median with `None` ordered after every finite value.
pub fn median_iterations(values: &[Option<usize>]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v: Vec<Option<usize>> = values.to_vec();
    v.sort_by_key(|x| x.unwrap_or(usize::MAX));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2].map(|x| x as f64)
    } else {
        Some((v[n / 2 - 1]? as f64 + v[n / 2]? as f64) / 2.0)
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Aggregates runs grouped by cell. Runs of unequal length are truncated
/// to the shortest with a warning.
pub fn summarize_runs(cells: BTreeMap<String, Vec<Vec<IterationRecord>>>, threshold: f64) -> Summary {
    let mut out = Vec::new();
    for (name, runs) in cells {
        let shortest = runs.iter().map(Vec::len).min().unwrap_or(0);
        if runs.iter().any(|r| r.len() != shortest) {
            log::warn!("{name}: runs have different iteration counts, truncating to {shortest}");
        }
        let rows = (0..shortest)
            .map(|k| {
                let s: Vec<f64> = runs.iter().map(|r| r[k].success_rate).collect();
                let w: Vec<f64> = runs.iter().map(|r| r[k].mean_reward).collect();
                SummaryRow {
                    iteration: runs[0][k].iteration,
                    seeds: runs.len(),
                    success_mean: mean(&s),
                    success_half_width: t_half_width(&s),
                    reward_mean: mean(&w),
                    reward_half_width: t_half_width(&w),
                }
            })
            .collect();
        let iterations_to_threshold: Vec<Option<usize>> =
            runs.iter().map(|r| iterations_to(&r[..shortest], threshold)).collect();
        out.push(CellSummary {
            median_iterations_to_threshold: median_iterations(&iterations_to_threshold),
            name,
            rows,
            iterations_to_threshold,
        });
    }
    Summary { threshold, cells: out }
}

/// Loads metrics CSVs, groups them by [`cell_name`] and aggregates.
pub fn summarize(paths: &[PathBuf], threshold: f64) -> Result<Summary, HarnessError> {
    let mut cells: BTreeMap<String, Vec<Vec<IterationRecord>>> = BTreeMap::new();
    for p in paths {
        cells.entry(cell_name(p)).or_default().push(load_records(p)?);
    }
    Ok(summarize_runs(cells, threshold))
}

/// Writes the per-iteration table followed by a blank line and the
/// iterations-to-threshold table.
pub fn write_summary<W: Write>(s: &Summary, w: &mut W) -> std::io::Result<()> {
    writeln!(w, "cell,iteration,seeds,success_mean,success_half_width,reward_mean,reward_half_width")?;
    for c in &s.cells {
        for r in &c.rows {
            writeln!(
                w,
                "{},{},{},{:?},{:?},{:?},{:?}",
                c.name, r.iteration, r.seeds, r.success_mean, r.success_half_width, r.reward_mean, r.reward_half_width
            )?;
        }
    }
    writeln!(w)?;
    writeln!(w, "cell,threshold,per_seed_iterations,median_iterations")?;
    for c in &s.cells {
        let per: Vec<String> = c
            .iterations_to_threshold
            .iter()
            .map(|x| x.map_or("never".to_string(), |v| v.to_string()))
            .collect();
        let med = c.median_iterations_to_threshold.map_or("never".to_string(), |m| format!("{m:?}"));
        writeln!(w, "{},{:?},{},{}", c.name, s.threshold, per.join(" "), med)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(iteration: usize, success_rate: f64) -> IterationRecord {
        IterationRecord {
            iteration,
            timesteps: iteration as u64 * 100,
            episodes: 10,
            success_rate,
            mean_reward: -success_rate,
            wall_seconds: 0.0,
        }
    }

    #[test]
    fn single_seed_has_zero_width() {
        assert_eq!(t_half_width(&[0.3]), 0.0);
        let s = summarize_runs(BTreeMap::from([("a".to_string(), vec![vec![rec(1, 0.3)]])]), 0.5);
        assert_eq!(s.cells[0].rows[0].success_half_width, 0.0);
    }

    #[test]
    fn two_seed_mean() {
        let runs = vec![vec![rec(1, 0.4)], vec![rec(1, 0.6)]];
        let s = summarize_runs(BTreeMap::from([("a".to_string(), runs)]), 0.5);
        assert!((s.cells[0].rows[0].success_mean - 0.5).abs() < 1e-15);
    }

    #[test]
    fn truncates_to_shortest() {
        let runs = vec![vec![rec(1, 0.1), rec(2, 0.6)], vec![rec(1, 0.2)]];
        let s = summarize_runs(BTreeMap::from([("a".to_string(), runs)]), 0.5);
        assert_eq!(s.cells[0].rows.len(), 1);
        assert_eq!(s.cells[0].iterations_to_threshold, vec![None, None]);
    }

    #[test]
    fn median_treats_never_as_infinite() {
        assert_eq!(median_iterations(&[Some(3), None, Some(5)]), Some(5.0));
        assert_eq!(median_iterations(&[None, None, Some(5)]), None);
        assert_eq!(median_iterations(&[Some(2), Some(4)]), Some(3.0));
    }

    #[test]
    fn cell_names_strip_seed() {
        assert_eq!(
            cell_name(Path::new("out/peg_in_hole_no_demos_der_seed12.csv")),
            "peg_in_hole_no_demos_der"
        );
        assert_eq!(cell_name(Path::new("x_seed.csv")), "x_seed");
    }
}
