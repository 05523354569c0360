//! Per-slice sweep results and range-grouping tables.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{MetricReport, MetricSummary};

/// Default bin edges for grouping slices by `x_ssp`.
pub const SSP_EDGES: [f64; 4] = [0.01, 0.05, 0.1, 0.15];
/// Default bin edges for grouping slices by `x_essp`.
pub const ESSP_EDGES: [f64; 6] = [0.3, 0.4, 0.5, 1.0, 2.0, 4.0];

/// Metric reports of consecutive model slices, ordered by slice index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    reports: Vec<MetricReport>,
}

impl SweepResult {
    /// Sorts by slice index; duplicate indices are rejected.
    pub fn new(mut reports: Vec<MetricReport>) -> Result<Self> {
        reports.sort_by_key(|r| r.slice_id);
        if let Some(w) = reports.windows(2).find(|w| w[0].slice_id == w[1].slice_id) {
            return Err(Error::InvalidInput(format!(
                "duplicate slice index {}",
                w[0].slice_id
            )));
        }
        Ok(SweepResult { reports })
    }

    pub fn reports(&self) -> &[MetricReport] {
        &self.reports
    }

    pub fn summaries(&self) -> Vec<MetricSummary> {
        self.reports.iter().map(MetricReport::summary).collect()
    }
}

/// One bin of a grouping table: `[lower, upper)`, open-ended where `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct RangeGroup {
    pub lower: Option<f64>,
    pub upper: Option<f64>,
    /// Slices in the bin, sorted.
    pub slices: Vec<usize>,
}

impl RangeGroup {
    /// Maximal runs of consecutive slice indices.
    pub fn runs(&self) -> Vec<(usize, usize)> {
        let mut out: Vec<(usize, usize)> = Vec::new();
        for &s in &self.slices {
            match out.last_mut() {
                Some((_, hi)) if *hi + 1 == s => *hi = s,
                _ => out.push((s, s)),
            }
        }
        out
    }

    pub fn label(&self) -> String {
        match (self.lower, self.upper) {
            (Some(lo), Some(hi)) => format!("{lo}~{hi}"),
            (None, Some(hi)) => format!("<{hi}"),
            (Some(lo), None) => format!(">={lo}"),
            (None, None) => "all".into(),
        }
    }
}

impl fmt::Display for RangeGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let runs: Vec<String> = self
            .runs()
            .into_iter()
            .map(|(a, b)| {
                if a == b {
                    format!("M_{a}")
                } else {
                    format!("M_{a}~M_{b}")
                }
            })
            .collect();
        write!(f, "{}\t{}", self.label(), runs.join(" "))
    }
}

/// Bins `(slice, value)` pairs by `edges`. Values below the first edge and
/// at or above the last edge get open-ended bins. Empty bins are omitted.
pub fn group_by_ranges(values: &[(usize, f64)], edges: &[f64]) -> Result<Vec<RangeGroup>> {
    if edges.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::InvalidInput(
            "bin edges must be strictly increasing".into(),
        ));
    }
    let mut groups: Vec<RangeGroup> = (0..=edges.len())
        .map(|i| RangeGroup {
            lower: i.checked_sub(1).map(|j| edges[j]),
            upper: edges.get(i).copied(),
            slices: Vec::new(),
        })
        .collect();
    for &(slice, v) in values {
        let bin = edges.partition_point(|&e| e <= v);
        groups[bin].slices.push(slice);
    }
    for g in &mut groups {
        g.slices.sort_unstable();
    }
    groups.retain(|g| !g.slices.is_empty());
    Ok(groups)
}

pub fn render_groups(title: &str, groups: &[RangeGroup]) -> String {
    let mut out = format!("{title}\tM\n");
    for g in groups {
        out.push_str(&g.to_string());
        out.push('\n');
    }
    out
}

/// Rows whose supervised value lies outside `[x_ssp, x_essp]`.
pub fn ordering_violations(rows: &[MetricSummary]) -> Vec<usize> {
    rows.iter()
        .filter(|r| !r.bounds_hold())
        .map(|r| r.slice)
        .collect()
}
