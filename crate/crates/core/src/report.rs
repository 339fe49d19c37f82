//! Deterministic emission of CSV tables, JSON summaries, and SVG plots.
//!
//! Every emitted file embeds the tool version, the configuration hash, and
//! the conventions in force, as `#`-prefixed comment lines (CSV), an XML
//! comment (SVG), or plain fields (JSON). Identical inputs produce
//! byte-identical files: no timestamps, no machine-dependent paths, and no
//! hash-map iteration feed the writers.

use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

/// Content hash over input files (in order) plus a settings string.
/// Binding outputs to input bytes rather than paths keeps reports
/// reproducible from any working directory.
pub fn content_fingerprint(files: &[PathBuf], knobs: &str) -> std::io::Result<String> {
    let mut hasher = Sha256::new();
    for path in files {
        let bytes = fs::read(path)?;
        hasher.update((bytes.len() as u64).to_le_bytes());
        hasher.update(&bytes);
    }
    hasher.update(knobs.as_bytes());
    let digest = hasher.finalize();
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

/// Header block shared by every output file.
#[derive(Debug, Clone)]
pub struct FileHeader {
    pub tool_version: String,
    pub config_hash: String,
    /// Convention notes, one line each (already formatted).
    pub conventions: Vec<String>,
}

impl FileHeader {
    pub fn comment_lines(&self) -> Vec<String> {
        let mut lines = vec![
            format!("scalegrade v{}", self.tool_version),
            format!("config_hash: {}", self.config_hash),
        ];
        lines.extend(self.conventions.iter().cloned());
        lines
    }
}

/// Minimal CSV escaping: quote fields containing commas, quotes, or
/// newlines.
pub fn csv_field(raw: &str) -> String {
    if raw.contains(',') || raw.contains('"') || raw.contains('\n') {
        format!("\"{}\"", raw.replace('"', "\"\""))
    } else {
        raw.to_string()
    }
}

/// Writes a CSV file with comment headers, a column row, and data rows.
pub fn write_csv(
    path: &Path,
    header: &FileHeader,
    columns: &[&str],
    rows: &[Vec<String>],
) -> std::io::Result<()> {
    let mut out = String::new();
    for line in header.comment_lines() {
        out.push_str("# ");
        out.push_str(&line);
        out.push('\n');
    }
    out.push_str(&columns.join(","));
    out.push('\n');
    for row in rows {
        debug_assert_eq!(row.len(), columns.len());
        let escaped: Vec<String> = row.iter().map(|f| csv_field(f)).collect();
        out.push_str(&escaped.join(","));
        out.push('\n');
    }
    fs::write(path, out)
}

/// One polyline for [`svg_line_plot`].
pub struct PlotSeries {
    pub label: String,
    /// (scale, grade) points, ascending scale.
    pub points: Vec<(f64, f64)>,
    /// Stroke style: solid observed data or dashed fitted line.
    pub dashed: bool,
}

/// Emits a minimal static line plot of grade versus scale. The y-axis is
/// fixed to [0, 1]; the x-axis spans the observed scales.
pub fn svg_line_plot(
    path: &Path,
    header: &FileHeader,
    title: &str,
    series: &[PlotSeries],
) -> std::io::Result<()> {
    const WIDTH: f64 = 640.0;
    const HEIGHT: f64 = 400.0;
    const MARGIN: f64 = 48.0;
    let x_min = series
        .iter()
        .flat_map(|s| s.points.iter().map(|p| p.0))
        .fold(f64::INFINITY, f64::min);
    let x_max = series
        .iter()
        .flat_map(|s| s.points.iter().map(|p| p.0))
        .fold(f64::NEG_INFINITY, f64::max);
    let span = if (x_max - x_min).abs() < f64::EPSILON {
        1.0
    } else {
        x_max - x_min
    };
    let to_px = |x: f64, y: f64| {
        let px = MARGIN + (x - x_min) / span * (WIDTH - 2.0 * MARGIN);
        let py = HEIGHT - MARGIN - y.clamp(0.0, 1.0) * (HEIGHT - 2.0 * MARGIN);
        (px, py)
    };

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\">\n"
    ));
    svg.push_str("<!--\n");
    for line in header.comment_lines() {
        svg.push_str(&format!("  {line}\n"));
    }
    svg.push_str("-->\n");
    svg.push_str(&format!(
        "<text x=\"{:.1}\" y=\"24\" font-family=\"monospace\" font-size=\"14\" text-anchor=\"middle\">{}</text>\n",
        WIDTH / 2.0,
        xml_escape(title)
    ));
    // Axes.
    let (x0, y0) = to_px(x_min, 0.0);
    let (x1, _) = to_px(x_max, 0.0);
    let (_, y1) = to_px(x_min, 1.0);
    svg.push_str(&format!(
        "<line x1=\"{x0:.1}\" y1=\"{y0:.1}\" x2=\"{x1:.1}\" y2=\"{y0:.1}\" stroke=\"black\"/>\n"
    ));
    svg.push_str(&format!(
        "<line x1=\"{x0:.1}\" y1=\"{y0:.1}\" x2=\"{x0:.1}\" y2=\"{y1:.1}\" stroke=\"black\"/>\n"
    ));
    for tick in [0.0, 0.25, 0.5, 0.75, 1.0] {
        let (_, ty) = to_px(x_min, tick);
        svg.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{:.1}\" font-family=\"monospace\" font-size=\"10\" text-anchor=\"end\">{tick:.2}</text>\n",
            x0 - 6.0,
            ty + 3.0
        ));
    }

    let palette = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#8c564b", "#e377c2"];
    for (i, s) in series.iter().enumerate() {
        let color = palette[i % palette.len()];
        let coords: Vec<String> = s
            .points
            .iter()
            .map(|&(x, y)| {
                let (px, py) = to_px(x, y);
                format!("{px:.1},{py:.1}")
            })
            .collect();
        let dash = if s.dashed { " stroke-dasharray=\"6 3\"" } else { "" };
        svg.push_str(&format!(
            "<polyline fill=\"none\" stroke=\"{color}\"{dash} stroke-width=\"1.5\" points=\"{}\"/>\n",
            coords.join(" ")
        ));
        if !s.dashed {
            for &(x, y) in &s.points {
                let (px, py) = to_px(x, y);
                svg.push_str(&format!(
                    "<circle cx=\"{px:.1}\" cy=\"{py:.1}\" r=\"3\" fill=\"{color}\"/>\n"
                ));
                svg.push_str(&format!(
                    "<text x=\"{px:.1}\" y=\"{:.1}\" font-family=\"monospace\" font-size=\"10\" text-anchor=\"middle\">{x:.2}</text>\n",
                    HEIGHT - MARGIN + 14.0
                ));
            }
        }
        svg.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{:.1}\" font-family=\"monospace\" font-size=\"11\" fill=\"{color}\">{}</text>\n",
            MARGIN + 4.0,
            MARGIN + 14.0 * (i as f64 + 1.0),
            xml_escape(&s.label)
        ));
    }
    svg.push_str("</svg>\n");
    fs::write(path, svg)
}

fn xml_escape(raw: &str) -> String {
    raw.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// File-name slug: lowercase alphanumerics with dashes.
pub fn slug(raw: &str) -> String {
    let mut out = String::with_capacity(raw.len());
    let mut last_dash = true;
    for c in raw.chars() {
        if c.is_ascii_alphanumeric() {
            out.push(c.to_ascii_lowercase());
            last_dash = false;
        } else if !last_dash {
            out.push('-');
            last_dash = true;
        }
    }
    while out.ends_with('-') {
        out.pop();
    }
    out
}

/// Tracks files created during one pipeline run so partial output can be
/// removed when a later stage fails.
#[derive(Default)]
pub struct OutputTracker {
    created: Vec<PathBuf>,
}

impl OutputTracker {
    pub fn record(&mut self, path: PathBuf) -> PathBuf {
        self.created.push(path.clone());
        path
    }

    /// Best-effort removal of everything recorded.
    pub fn remove_all(&self) {
        for path in &self.created {
            let _ = fs::remove_file(path);
        }
    }
}
