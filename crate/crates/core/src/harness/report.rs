use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{ComparisonTable, MetricsReport};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedReport {
    pub model: String,
    pub metrics: MetricsReport,
}

/// Everything the `report` command emits, as text and as JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub models: Vec<NamedReport>,
    pub comparison: Option<ComparisonTable>,
}

impl RunReport {
    pub fn render(&self) -> String {
        let mut s = String::new();
        for r in &self.models {
            let m = &r.metrics;
            let _ = writeln!(s, "Model: {}", r.model);
            let _ = writeln!(
                s,
                "  records {}  accuracy {:.2}%  F1 {:.2}%",
                m.count,
                m.accuracy * 100.0,
                m.f1 * 100.0
            );
            let width = m.per_meta_category.keys().map(String::len).max().unwrap_or(0).max(13);
            let _ = writeln!(s, "  {:<width$}  {:>5}  {:>8}", "Meta-category", "Count", "Accuracy");
            for (k, c) in &m.per_meta_category {
                let _ = writeln!(s, "  {k:<width$}  {:>5}  {:>8.2}", c.count, c.accuracy * 100.0);
            }
            s.push('\n');
        }
        if let Some(t) = &self.comparison {
            let _ = writeln!(s, "Comparison (accuracy %, * = best, improvement of {} in points)", t.ensemble);
            s.push_str(&t.render());
        }
        s
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serialises");
        s.push('\n');
        s
    }
}
