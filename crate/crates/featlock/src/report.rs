//! Report files and SVG charts.

use std::fmt::Write as _;
use std::path::Path;

use crate::attacks::AttackSuiteResult;
use crate::error::{Error, Result};

const PALETTE: [&str; 4] = ["#3b6ea8", "#d9822b", "#7a7a7a", "#5aa469"];

/// Grouped vertical bars for values in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct BarChart {
    pub title: String,
    pub series: Vec<String>,
    /// `(group label, one value per series)`.
    pub groups: Vec<(String, Vec<f64>)>,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

impl BarChart {
    /// Correct / plain / incorrect-mean bars, one group per attack row.
    pub fn from_attacks(title: &str, rows: &[AttackSuiteResult]) -> Self {
        Self {
            title: title.into(),
            series: vec!["correct".into(), "plain".into(), "incorrect".into()],
            groups: rows
                .iter()
                .map(|r| {
                    (
                        r.target.to_string(),
                        vec![r.correct_map, r.plain_map, r.incorrect_map_mean],
                    )
                })
                .collect(),
        }
    }

    pub fn to_svg(&self) -> String {
        let (bar_w, gap, left, top, plot_h) = (18.0, 14.0, 50.0, 40.0, 200.0);
        let ns = self.series.len().max(1) as f64;
        let group_w = ns * bar_w + gap;
        let width = left + group_w * self.groups.len().max(1) as f64 + 120.0;
        let height = top + plot_h + 50.0;
        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="11">"#
        );
        let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
        let _ = writeln!(
            s,
            r#"<text x="{left}" y="20" font-size="14">{}</text>"#,
            escape(&self.title)
        );
        for tick in 0..=4 {
            let v = tick as f64 / 4.0;
            let y = top + plot_h * (1.0 - v);
            let _ = writeln!(
                s,
                r##"<line x1="{left}" y1="{y}" x2="{x2}" y2="{y}" stroke="#ddd"/><text x="{tx}" y="{ty}" text-anchor="end">{v:.2}</text>"##,
                x2 = width - 120.0,
                tx = left - 4.0,
                ty = y + 4.0
            );
        }
        for (gi, (label, values)) in self.groups.iter().enumerate() {
            let x0 = left + gap / 2.0 + gi as f64 * group_w;
            for (si, &v) in values.iter().enumerate() {
                let v = if v.is_finite() { v.clamp(0.0, 1.0) } else { 0.0 };
                let h = plot_h * v;
                let _ = writeln!(
                    s,
                    r#"<rect x="{x}" y="{y}" width="{bar_w}" height="{h}" fill="{c}"><title>{t}: {v:.4}</title></rect>"#,
                    x = x0 + si as f64 * bar_w,
                    y = top + plot_h - h,
                    c = PALETTE[si % PALETTE.len()],
                    t = escape(self.series.get(si).map_or("", String::as_str)),
                );
            }
            let _ = writeln!(
                s,
                r#"<text x="{x}" y="{y}" text-anchor="middle">{}</text>"#,
                escape(label),
                x = x0 + ns * bar_w / 2.0,
                y = top + plot_h + 16.0
            );
        }
        for (si, name) in self.series.iter().enumerate() {
            let y = top + 14.0 * si as f64;
            let x = width - 110.0;
            let _ = writeln!(
                s,
                r#"<rect x="{x}" y="{y}" width="10" height="10" fill="{c}"/><text x="{tx}" y="{ty}">{}</text>"#,
                escape(name),
                c = PALETTE[si % PALETTE.len()],
                tx = x + 14.0,
                ty = y + 9.0
            );
        }
        s.push_str("</svg>\n");
        s
    }
}

/// Writes `contents`, creating parent directories.
pub fn write_file(path: impl AsRef<Path>, contents: &str) -> Result<()> {
    let path = path.as_ref();
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}
