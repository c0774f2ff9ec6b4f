//! Artifact output: CSV tables and small SVG plots.
//!
//! CSV is written by hand so float formatting is under our control: Rust's
//! shortest-roundtrip `{}` formatting makes reruns byte-identical and keeps
//! full precision. SVGs are a thin layer over the same data.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::Result;
use crate::grid::StateGrid;

/// In-memory table; all cells are already-formatted strings.
#[derive(Clone, Debug)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

pub fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

impl Table {
    pub fn new(header: &[&str]) -> Table {
        Table {
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        assert_eq!(row.len(), self.header.len(), "row width must match header");
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        out.push_str(&self.header.join(","));
        out.push('\n');
        for row in &self.rows {
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }
}

/// Single-panel line/scatter plot mapping data coordinates to a fixed
/// viewport; no external renderer, just shapes.
pub struct SvgPlot {
    width: f64,
    height: f64,
    margin: f64,
    x_range: (f64, f64),
    y_range: (f64, f64),
    title: String,
    x_label: String,
    y_label: String,
    body: String,
    legend: Vec<(String, String)>,
}

impl SvgPlot {
    pub fn new(title: &str, x_label: &str, y_label: &str, x_range: (f64, f64), y_range: (f64, f64)) -> SvgPlot {
        SvgPlot {
            width: 640.0,
            height: 420.0,
            margin: 56.0,
            x_range: pad_range(x_range),
            y_range: pad_range(y_range),
            title: title.to_string(),
            x_label: x_label.to_string(),
            y_label: y_label.to_string(),
            body: String::new(),
            legend: Vec::new(),
        }
    }

    fn px(&self, x: f64) -> f64 {
        let (lo, hi) = self.x_range;
        self.margin + (x - lo) / (hi - lo) * (self.width - 2.0 * self.margin)
    }

    fn py(&self, y: f64) -> f64 {
        let (lo, hi) = self.y_range;
        self.height - self.margin - (y - lo) / (hi - lo) * (self.height - 2.0 * self.margin)
    }

    pub fn line(&mut self, xs: &[f64], ys: &[f64], color: &str, label: &str) {
        let pts: Vec<String> = xs
            .iter()
            .zip(ys.iter())
            .map(|(&x, &y)| format!("{:.2},{:.2}", self.px(x), self.py(y)))
            .collect();
        let _ = writeln!(
            self.body,
            r#"<polyline fill="none" stroke="{color}" stroke-width="1.8" points="{}"/>"#,
            pts.join(" ")
        );
        if !label.is_empty() {
            self.legend.push((label.to_string(), color.to_string()));
        }
    }

    /// Shaded band between `lo` and `hi`, e.g. mean plus/minus stderr.
    pub fn band(&mut self, xs: &[f64], lo: &[f64], hi: &[f64], color: &str) {
        let mut pts: Vec<String> = xs
            .iter()
            .zip(hi.iter())
            .map(|(&x, &y)| format!("{:.2},{:.2}", self.px(x), self.py(y)))
            .collect();
        pts.extend(
            xs.iter()
                .zip(lo.iter())
                .rev()
                .map(|(&x, &y)| format!("{:.2},{:.2}", self.px(x), self.py(y))),
        );
        let _ = writeln!(
            self.body,
            r#"<polygon fill="{color}" fill-opacity="0.18" stroke="none" points="{}"/>"#,
            pts.join(" ")
        );
    }

    pub fn scatter(&mut self, xs: &[f64], ys: &[f64], color: &str, radius: f64, label: &str) {
        for (&x, &y) in xs.iter().zip(ys.iter()) {
            let _ = writeln!(
                self.body,
                r#"<circle cx="{:.2}" cy="{:.2}" r="{radius}" fill="{color}" fill-opacity="0.75"/>"#,
                self.px(x),
                self.py(y)
            );
        }
        if !label.is_empty() {
            self.legend.push((label.to_string(), color.to_string()));
        }
    }

    /// Fills grid cells where the mask holds; used for permitted sets and
    /// basins of attraction.
    pub fn mask_cells(&mut self, grid: &StateGrid, mask: &[bool], color: &str, label: &str) {
        let w = (self.px(grid.theta(1)) - self.px(grid.theta(0))).abs();
        let h = (self.py(grid.theta_dot(1)) - self.py(grid.theta_dot(0))).abs();
        for i in 0..grid.n_theta {
            for j in 0..grid.n_theta_dot {
                if mask[grid.index(i, j)] {
                    let _ = writeln!(
                        self.body,
                        r#"<rect x="{:.2}" y="{:.2}" width="{w:.2}" height="{h:.2}" fill="{color}" fill-opacity="0.55"/>"#,
                        self.px(grid.theta(i)) - w / 2.0,
                        self.py(grid.theta_dot(j)) - h / 2.0
                    );
                }
            }
        }
        if !label.is_empty() {
            self.legend.push((label.to_string(), color.to_string()));
        }
    }

    fn axes(&self) -> String {
        let mut s = String::new();
        let (x0, x1) = (self.margin, self.width - self.margin);
        let (y0, y1) = (self.margin, self.height - self.margin);
        let _ = writeln!(
            s,
            r##"<rect x="{x0}" y="{y0}" width="{}" height="{}" fill="none" stroke="#333" stroke-width="1"/>"##,
            x1 - x0,
            y1 - y0
        );
        for t in 0..=4 {
            let fx = self.x_range.0 + (self.x_range.1 - self.x_range.0) * t as f64 / 4.0;
            let fy = self.y_range.0 + (self.y_range.1 - self.y_range.0) * t as f64 / 4.0;
            let px = self.px(fx);
            let py = self.py(fy);
            let _ = writeln!(s, r##"<line x1="{px:.2}" y1="{y1}" x2="{px:.2}" y2="{}" stroke="#333"/>"##, y1 + 4.0);
            let _ = writeln!(
                s,
                r#"<text x="{px:.2}" y="{}" font-size="11" text-anchor="middle">{fx:.3}</text>"#,
                y1 + 18.0
            );
            let _ = writeln!(s, r##"<line x1="{}" y1="{py:.2}" x2="{x0}" y2="{py:.2}" stroke="#333"/>"##, x0 - 4.0);
            let _ = writeln!(
                s,
                r#"<text x="{}" y="{:.2}" font-size="11" text-anchor="end">{fy:.3}</text>"#,
                x0 - 7.0,
                py + 4.0
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="20" font-size="14" text-anchor="middle">{}</text>"#,
            self.width / 2.0,
            xml_escape(&self.title)
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" font-size="12" text-anchor="middle">{}</text>"#,
            self.width / 2.0,
            self.height - 10.0,
            xml_escape(&self.x_label)
        );
        let _ = writeln!(
            s,
            r#"<text x="16" y="{:.1}" font-size="12" text-anchor="middle" transform="rotate(-90 16 {:.1})">{}</text>"#,
            self.height / 2.0,
            self.height / 2.0,
            xml_escape(&self.y_label)
        );
        s
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{}" height="{}" viewBox="0 0 {} {}">"#,
            self.width, self.height, self.width, self.height
        );
        let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
        out.push_str(&self.axes());
        out.push_str(&self.body);
        for (i, (label, color)) in self.legend.iter().enumerate() {
            let y = self.margin + 14.0 + 16.0 * i as f64;
            let x = self.width - self.margin - 150.0;
            let _ = writeln!(out, r#"<rect x="{x}" y="{:.1}" width="10" height="10" fill="{color}"/>"#, y - 9.0);
            let _ = writeln!(
                out,
                r#"<text x="{:.1}" y="{y:.1}" font-size="11">{}</text>"#,
                x + 14.0,
                xml_escape(label)
            );
        }
        out.push_str("</svg>\n");
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        std::fs::write(path, self.render())?;
        Ok(())
    }
}

fn pad_range((lo, hi): (f64, f64)) -> (f64, f64) {
    if lo < hi {
        (lo, hi)
    } else {
        (lo - 0.5, lo + 0.5)
    }
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
