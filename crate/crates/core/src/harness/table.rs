use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{HarnessError, MetricsReport, Result};

pub const OVERALL: &str = "Overall";

/// One category row: every model's accuracy (a fraction), which models
/// hold the best value, and the ensemble's gain in percentage points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub category: String,
    pub values: Vec<Option<f64>>,
    pub best: Vec<bool>,
    pub improvement_pp: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub models: Vec<String>,
    pub ensemble: String,
    pub rows: Vec<ComparisonRow>,
}

/// Percentage points to two decimals with an explicit sign; zero has none.
pub fn format_pp(x: f64) -> String {
    let s = format!("{:.2}", x);
    if s == "0.00" || s == "-0.00" {
        "0.00".into()
    } else if x > 0.0 {
        format!("+{s}")
    } else {
        s
    }
}

impl ComparisonTable {
    /// Builds the table from per-category accuracies. `ensemble` names the
    /// model whose gain over the best of the others is reported.
    pub fn from_scores(models: &[(String, BTreeMap<String, f64>)], ensemble: &str) -> Result<Self> {
        if models.len() < 2 {
            return Err(HarnessError::Data("a comparison needs at least two reports".into()));
        }
        let e = models
            .iter()
            .position(|(n, _)| n == ensemble)
            .ok_or_else(|| HarnessError::Data(format!("no report named {ensemble:?}")))?;
        let mut cats: BTreeSet<&str> = models.iter().flat_map(|(_, m)| m.keys().map(String::as_str)).collect();
        let has_overall = cats.remove(OVERALL);
        let mut order: Vec<&str> = cats.into_iter().collect();
        if has_overall {
            order.push(OVERALL);
        }
        let rows = order
            .into_iter()
            .map(|cat| {
                let values: Vec<Option<f64>> = models.iter().map(|(_, m)| m.get(cat).copied()).collect();
                let top = values.iter().flatten().copied().fold(f64::NEG_INFINITY, f64::max);
                let best = values.iter().map(|v| *v == Some(top)).collect();
                let best_other = values
                    .iter()
                    .enumerate()
                    .filter(|&(i, _)| i != e)
                    .filter_map(|(_, v)| *v)
                    .fold(None, |acc: Option<f64>, v| Some(acc.map_or(v, |a| a.max(v))));
                let improvement_pp = match (values[e], best_other) {
                    (Some(x), Some(b)) => Some((x - b) * 100.0),
                    _ => None,
                };
                ComparisonRow {
                    category: cat.to_string(),
                    values,
                    best,
                    improvement_pp,
                }
            })
            .collect();
        Ok(Self {
            models: models.iter().map(|(n, _)| n.clone()).collect(),
            ensemble: ensemble.to_string(),
            rows,
        })
    }

    /// Aligned plain text; `*` marks the best value of each row.
    pub fn render(&self) -> String {
        let mut header = vec!["Category".to_string()];
        header.extend(self.models.iter().cloned());
        header.push("Improvement".into());
        let mut lines = vec![header];
        for r in &self.rows {
            let mut line = vec![r.category.clone()];
            for (v, &b) in r.values.iter().zip(&r.best) {
                line.push(match v {
                    Some(x) => format!("{:.2}{}", x * 100.0, if b { "*" } else { "" }),
                    None => "-".into(),
                });
            }
            line.push(r.improvement_pp.map_or("-".into(), format_pp));
            lines.push(line);
        }
        let widths: Vec<usize> = (0..lines[0].len())
            .map(|c| lines.iter().map(|l| l[c].chars().count()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for (i, l) in lines.iter().enumerate() {
            let cells: Vec<String> = l
                .iter()
                .enumerate()
                .map(|(c, s)| {
                    if c == 0 {
                        format!("{s:<w$}", w = widths[c])
                    } else {
                        format!("{s:>w$}", w = widths[c])
                    }
                })
                .collect();
            let _ = writeln!(out, "{}", cells.join("  ").trim_end());
            if i == 0 {
                let total = widths.iter().sum::<usize>() + 2 * (widths.len() - 1);
                let _ = writeln!(out, "{}", "-".repeat(total));
            }
        }
        out
    }
}

/// Comparison over the meta-category accuracies plus the overall row.
pub fn emit_comparison_table(reports: &[(String, MetricsReport)], ensemble: &str) -> Result<ComparisonTable> {
    let scores: Vec<(String, BTreeMap<String, f64>)> = reports
        .iter()
        .map(|(name, r)| {
            let mut m: BTreeMap<String, f64> = r.per_meta_category.iter().map(|(k, c)| (k.clone(), c.accuracy)).collect();
            m.insert(OVERALL.into(), r.accuracy);
            (name.clone(), m)
        })
        .collect();
    ComparisonTable::from_scores(&scores, ensemble)
}
