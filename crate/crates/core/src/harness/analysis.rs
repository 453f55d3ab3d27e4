use std::path::Path;

use serde::{Deserialize, Serialize};

use super::report::csv_err;
use super::{io_err, HarnessError, Result};
use crate::losses::{best_cce_emulation, convexity_probe, curve_sweep, ConvexityReport, LossFunction, ProbabilityGrid};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvesSummary {
    pub columns: Vec<String>,
    pub rows: usize,
    /// The `a` whose normalized curve deviates least from cross-entropy.
    pub best_cce_a: f64,
    pub best_cce_deviation: f64,
}

/// Writes `curves.csv`: a `p` column, one `adma(a)` column per requested `a`,
/// then `cce`, `mse` and `squared_hinge`, all evaluated at true-class
/// probability `p` with `epsilon` clamping.
pub fn emit_curves(a_values: &[f64], grid: &ProbabilityGrid, epsilon: f64, path: &Path) -> Result<CurvesSummary> {
    if a_values.is_empty() {
        return Err(HarnessError::InvalidRequest("curves need at least one value of a".into()));
    }
    let mut losses = a_values
        .iter()
        .map(|&a| LossFunction::adma(a)?.with_epsilon(epsilon))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    losses.push(LossFunction::cce().with_epsilon(epsilon)?);
    losses.push(LossFunction::mse().with_epsilon(epsilon)?);
    losses.push(LossFunction::squared_hinge().with_epsilon(epsilon)?);
    let samples = curve_sweep(&losses, grid)?;
    let columns: Vec<String> = std::iter::once("p".to_string())
        .chain(losses.iter().map(|l| l.to_string()))
        .collect();

    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(&columns).map_err(|e| csv_err(path, e))?;
    for s in &samples {
        let row: Vec<String> = std::iter::once(s.p).chain(s.values.iter().copied()).map(|v| v.to_string()).collect();
        w.write_record(&row).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(io_err(path))?;

    let (best_cce_a, best_cce_deviation) = best_cce_emulation(a_values, grid, epsilon)?;
    Ok(CurvesSummary {
        columns,
        rows: samples.len(),
        best_cce_a,
        best_cce_deviation,
    })
}

/// Probes each `a` and writes `a,is_convex,first_violation,min_curvature`
/// rows to `path`.
pub fn probe_convexity_table(a_values: &[f64], grid: &ProbabilityGrid, path: &Path) -> Result<Vec<ConvexityReport>> {
    if a_values.is_empty() {
        return Err(HarnessError::InvalidRequest("convexity probe needs at least one value of a".into()));
    }
    let reports = a_values
        .iter()
        .map(|&a| convexity_probe(a, grid))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(["a", "is_convex", "first_violation", "min_curvature"])
        .map_err(|e| csv_err(path, e))?;
    for r in &reports {
        w.write_record([
            r.a.to_string(),
            r.is_convex.to_string(),
            r.first_violation.map(|p| p.to_string()).unwrap_or_default(),
            r.min_curvature.to_string(),
        ])
        .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(io_err(path))?;
    Ok(reports)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn curves_csv_layout() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("curves.csv");
        let grid = ProbabilityGrid::new(1e-7, 1.0, 11).unwrap();
        let s = emit_curves(&[0.26, 0.5], &grid, 1e-7, &path).unwrap();
        assert_eq!(s.columns, ["p", "adma(0.26)", "adma(0.5)", "cce", "mse", "squared_hinge"]);
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 12);
        assert_eq!(lines[0], "p,adma(0.26),adma(0.5),cce,mse,squared_hinge");
        // at p = 1 every loss vanishes
        assert!(lines[11].starts_with("1,0,0,"));
        let first: Vec<f64> = lines[1].split(',').map(|v| v.parse().unwrap()).collect();
        assert!((first[3] - 16.11809565095832).abs() < 1e-9);
        assert!([0.26, 0.5].contains(&s.best_cce_a));
    }

    #[test]
    fn convexity_table_rows() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("convexity.csv");
        let grid = ProbabilityGrid::new(0.01, 1.0, 200).unwrap();
        let reports = probe_convexity_table(&[0.26, 0.8], &grid, &path).unwrap();
        assert!(reports[0].is_convex);
        assert!(!reports[1].is_convex);
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 3);
        assert!(text.lines().nth(1).unwrap().starts_with("0.26,true,,"));
        assert!(emit_curves(&[], &grid, 1e-7, &path).is_err());
    }
}
