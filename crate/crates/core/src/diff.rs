//! Cell-by-cell comparison of two exported CSV files.

use std::fs;
use std::io;
use std::path::Path;

use serde::Serialize;

/// One differing cell. Rows are 1-based file lines, so the header is row 1.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CellDiff {
    pub row: usize,
    pub column: String,
    pub left: String,
    pub right: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DiffReport {
    pub rows_compared: usize,
    pub differing_cells: usize,
    pub first: Option<CellDiff>,
}

impl DiffReport {
    pub fn is_identical(&self) -> bool {
        self.differing_cells == 0
    }
}

const MISSING: &str = "<missing>";

fn cells_equal(a: &str, b: &str, tolerance: Option<f64>) -> bool {
    if a == b {
        return true;
    }
    match (tolerance, a.parse::<f64>(), b.parse::<f64>()) {
        (Some(tol), Ok(x), Ok(y)) => (x - y).abs() <= tol,
        _ => false,
    }
}

/// Compares two CSV texts. With a tolerance, cells that both parse as
/// numbers match when they differ by at most that absolute amount.
pub fn diff_text(left: &str, right: &str, tolerance: Option<f64>) -> DiffReport {
    let l: Vec<Vec<&str>> = left.lines().map(|l| l.split(',').collect()).collect();
    let r: Vec<Vec<&str>> = right.lines().map(|l| l.split(',').collect()).collect();
    let header = l.first().or(r.first()).cloned().unwrap_or_default();
    let mut report = DiffReport { rows_compared: l.len().max(r.len()), differing_cells: 0, first: None };
    for i in 0..report.rows_compared {
        let (a, b) = (l.get(i), r.get(i));
        let width = a.map_or(0, Vec::len).max(b.map_or(0, Vec::len));
        for c in 0..width {
            let x = a.and_then(|row| row.get(c)).copied().unwrap_or(MISSING);
            let y = b.and_then(|row| row.get(c)).copied().unwrap_or(MISSING);
            if !cells_equal(x, y, tolerance) {
                report.differing_cells += 1;
                if report.first.is_none() {
                    report.first = Some(CellDiff {
                        row: i + 1,
                        column: header.get(c).map_or_else(|| format!("#{}", c + 1), |h| h.to_string()),
                        left: x.into(),
                        right: y.into(),
                    });
                }
            }
        }
    }
    report
}

pub fn diff_files(left: impl AsRef<Path>, right: impl AsRef<Path>, tolerance: Option<f64>) -> io::Result<DiffReport> {
    Ok(diff_text(&fs::read_to_string(left)?, &fs::read_to_string(right)?, tolerance))
}
