//! Grouped bar charts as standalone SVG, each written next to a CSV file
//! holding exactly the plotted numbers.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::{HarnessError, MetricsReport, Result};

const PALETTE: [&str; 6] = ["#4e79a7", "#f28e2b", "#59a14f", "#e15759", "#76b7b2", "#b07aa1"];

/// `groups[g] = (label, values per series)`, values in `[0, 1]`.
fn bar_chart(title: &str, series: &[String], groups: &[(String, Vec<Option<f64>>)]) -> String {
    let bar = 18.0;
    let gap = 24.0;
    let (left, top, plot_h) = (50.0, 40.0, 220.0);
    let group_w = bar * series.len() as f64 + gap;
    let width = left + group_w * groups.len() as f64 + 20.0;
    let height = top + plot_h + 60.0 + 18.0 * series.len() as f64;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{height:.0}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<text x="{left}" y="20" font-size="14">{}</text>"#, escape(title));
    for k in 0..=4 {
        let y = top + plot_h - plot_h * k as f64 / 4.0;
        let _ = writeln!(
            s,
            r##"<line x1="{left}" y1="{y:.1}" x2="{:.1}" y2="{y:.1}" stroke="#ddd"/><text x="{:.1}" y="{:.1}" text-anchor="end">{}%</text>"##,
            width - 20.0,
            left - 4.0,
            y + 4.0,
            k * 25
        );
    }
    for (g, (label, values)) in groups.iter().enumerate() {
        let x0 = left + gap / 2.0 + g as f64 * group_w;
        for (i, v) in values.iter().enumerate() {
            let Some(v) = v else { continue };
            let h = plot_h * v.clamp(0.0, 1.0);
            let _ = writeln!(
                s,
                r#"<rect x="{:.1}" y="{:.1}" width="{bar}" height="{h:.1}" fill="{}"><title>{}: {:.2}%</title></rect>"#,
                x0 + i as f64 * bar,
                top + plot_h - h,
                PALETTE[i % PALETTE.len()],
                escape(&series[i]),
                v * 100.0
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            x0 + bar * values.len() as f64 / 2.0,
            top + plot_h + 16.0,
            escape(label)
        );
    }
    for (i, name) in series.iter().enumerate() {
        let y = top + plot_h + 40.0 + 18.0 * i as f64;
        let _ = writeln!(
            s,
            r#"<rect x="{left}" y="{:.1}" width="12" height="12" fill="{}"/><text x="{:.1}" y="{:.1}">{}</text>"#,
            y - 10.0,
            PALETTE[i % PALETTE.len()],
            left + 18.0,
            y,
            escape(name)
        );
    }
    s.push_str("</svg>\n");
    s
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn write(dir: &Path, name: &str, bytes: &[u8], out: &mut Vec<PathBuf>) -> Result<()> {
    let path = dir.join(name);
    crate::write_atomic(&path, bytes).map_err(|e| HarnessError::io(&path, e))?;
    out.push(path);
    Ok(())
}

fn csv_bytes(header: &[&str], rows: &[Vec<String>]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).map_err(|e| HarnessError::Data(e.to_string()))?;
    for r in rows {
        w.write_record(r).map_err(|e| HarnessError::Data(e.to_string()))?;
    }
    w.into_inner().map_err(|e| HarnessError::Data(e.to_string()))
}

/// Writes `overall.svg/.csv` and, when any category is populated,
/// `categories.svg/.csv`. Returns the written paths.
pub fn plot_outputs(reports: &[(String, MetricsReport)], dir: &Path) -> Result<Vec<PathBuf>> {
    if reports.is_empty() {
        return Err(HarnessError::Data("nothing to plot".into()));
    }
    let mut written = Vec::new();
    let names: Vec<String> = reports.iter().map(|(n, _)| n.clone()).collect();

    let overall: Vec<(String, Vec<Option<f64>>)> = vec![
        ("accuracy".into(), reports.iter().map(|(_, r)| Some(r.accuracy)).collect()),
        ("F1".into(), reports.iter().map(|(_, r)| Some(r.f1)).collect()),
    ];
    write(dir, "overall.svg", bar_chart("Accuracy and F1 by model", &names, &overall).as_bytes(), &mut written)?;
    let rows: Vec<Vec<String>> = reports
        .iter()
        .map(|(n, r)| vec![n.clone(), r.accuracy.to_string(), r.f1.to_string()])
        .collect();
    write(dir, "overall.csv", &csv_bytes(&["model", "accuracy", "f1"], &rows)?, &mut written)?;

    let mut cats: Vec<&String> = reports.iter().flat_map(|(_, r)| r.per_meta_category.keys()).collect();
    cats.sort();
    cats.dedup();
    if !cats.is_empty() {
        let groups: Vec<(String, Vec<Option<f64>>)> = cats
            .iter()
            .map(|&c| {
                let vals = reports.iter().map(|(_, r)| r.per_meta_category.get(c).map(|x| x.accuracy)).collect();
                (c.clone(), vals)
            })
            .collect();
        write(
            dir,
            "categories.svg",
            bar_chart("Accuracy by meta-category", &names, &groups).as_bytes(),
            &mut written,
        )?;
        let mut rows = Vec::new();
        for &c in &cats {
            for (n, r) in reports {
                if let Some(cell) = r.per_meta_category.get(c) {
                    rows.push(vec![c.clone(), n.clone(), cell.accuracy.to_string(), cell.count.to_string()]);
                }
            }
        }
        write(
            dir,
            "categories.csv",
            &csv_bytes(&["category", "model", "accuracy", "count"], &rows)?,
            &mut written,
        )?;
    }
    Ok(written)
}
