//! Deterministic SVG charts rendered from CSV text.
//!
//! Each data-value label is a `<text class="v" data-row=".." data-col="..">`
//! element whose content is the CSV cell verbatim.

use std::fmt::Write;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Csv {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Csv {
    pub fn parse(text: &str) -> Result<Csv> {
        let mut lines = text.lines().filter(|l| !l.is_empty());
        let header: Vec<String> = lines
            .next()
            .ok_or_else(|| Error::Validation("empty CSV".into()))?
            .split(',')
            .map(str::to_string)
            .collect();
        let rows: Vec<Vec<String>> = lines.map(|l| l.split(',').map(str::to_string).collect()).collect();
        if let Some(i) = rows.iter().position(|r| r.len() != header.len()) {
            return Err(Error::Validation(format!("CSV row {} has the wrong number of cells", i + 1)));
        }
        Ok(Csv { header, rows })
    }

    pub fn col(&self, name: &str) -> Result<usize> {
        self.header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Validation(format!("CSV lacks column {name}")))
    }

    pub fn num(&self, row: usize, col: usize) -> Result<Option<f64>> {
        let cell = &self.rows[row][col];
        if cell.is_empty() {
            return Ok(None);
        }
        cell.parse()
            .map(Some)
            .map_err(|_| Error::Validation(format!("CSV cell {cell:?} is not a number")))
    }
}

const IMPROVED: &str = "#2b83ba";
const DEGRADED: &str = "#d7191c";
const NEUTRAL: &str = "#888888";

fn group_color(group: &str) -> &'static str {
    match group {
        "improved" => IMPROVED,
        "degraded" => DEGRADED,
        _ => NEUTRAL,
    }
}

fn open(w: f64, h: f64) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\" font-family=\"sans-serif\" font-size=\"10\">\n\
         <rect width=\"{w}\" height=\"{h}\" fill=\"white\"/>\n"
    )
}

fn value_label(svg: &mut String, x: f64, y: f64, anchor: &str, row: usize, col: &str, text: &str) {
    let _ = writeln!(
        svg,
        "<text class=\"v\" data-row=\"{row}\" data-col=\"{col}\" x=\"{x:.2}\" y=\"{y:.2}\" text-anchor=\"{anchor}\">{text}</text>"
    );
}

fn extent(values: impl IntoIterator<Item = f64>) -> (f64, f64) {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for v in values {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if !lo.is_finite() {
        return (-1.0, 1.0);
    }
    if hi - lo < 1e-12 {
        return (lo - 1.0, hi + 1.0);
    }
    let pad = 0.08 * (hi - lo);
    (lo - pad, hi + pad)
}

/// Bar chart of `delta_pp` per `class_index`, in CSV row order, colored by `group`.
pub fn delta_bar_svg(csv: &Csv) -> Result<String> {
    let (ci, di, gi) = (csv.col("class_index")?, csv.col("delta_pp")?, csv.col("group")?);
    let n = csv.rows.len();
    let bar = 28.0;
    let (w, h, top, bottom, left) = (70.0 + bar * n as f64, 340.0, 40.0, 290.0, 50.0);
    let values: Vec<f64> = (0..n).map(|r| csv.num(r, di).map(|v| v.unwrap_or(0.0))).collect::<Result<_>>()?;
    let (lo, hi) = extent(values.iter().copied().chain([0.0]));
    let y = |v: f64| bottom - (v - lo) / (hi - lo) * (bottom - top);
    let mut svg = open(w, h);
    let _ = writeln!(svg, "<text x=\"{left}\" y=\"20\" font-size=\"12\">Class recall change (pp), sorted</text>");
    let y0 = y(0.0);
    let _ = writeln!(svg, "<line x1=\"{left}\" y1=\"{y0:.2}\" x2=\"{:.2}\" y2=\"{y0:.2}\" stroke=\"black\"/>", w - 20.0);
    for (r, &v) in values.iter().enumerate() {
        let x = left + r as f64 * bar + 3.0;
        let (y_top, y_bot) = if v >= 0.0 { (y(v), y0) } else { (y0, y(v)) };
        let _ = writeln!(
            svg,
            "<rect x=\"{x:.2}\" y=\"{y_top:.2}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"{}\"/>",
            bar - 6.0,
            y_bot - y_top,
            group_color(&csv.rows[r][gi])
        );
        let cx = x + (bar - 6.0) / 2.0;
        let ly = if v >= 0.0 { y_top - 3.0 } else { y_bot + 10.0 };
        value_label(&mut svg, cx, ly, "middle", r, "delta_pp", &csv.rows[r][di]);
        value_label(&mut svg, cx, bottom + 22.0, "middle", r, "class_index", &csv.rows[r][ci]);
    }
    let _ = writeln!(svg, "<text x=\"{left}\" y=\"{:.2}\" fill=\"{IMPROVED}\">improved</text>", h - 12.0);
    let _ = writeln!(svg, "<text x=\"{:.2}\" y=\"{:.2}\" fill=\"{DEGRADED}\">degraded</text>", left + 70.0, h - 12.0);
    svg.push_str("</svg>\n");
    Ok(svg)
}

/// Scatter of `delta_confidence` against `delta_recall_pp`.
pub fn confidence_scatter_svg(csv: &Csv) -> Result<String> {
    let ci = csv.col("class_index")?;
    let xi = csv.col("delta_recall_pp")?;
    let yi = csv.col("delta_confidence")?;
    let gi = csv.col("group")?;
    let n = csv.rows.len();
    let pts: Vec<(f64, f64)> = (0..n)
        .map(|r| Ok((csv.num(r, xi)?.unwrap_or(0.0), csv.num(r, yi)?.unwrap_or(0.0))))
        .collect::<Result<_>>()?;
    let (w, h, left, right, top, bottom) = (520.0, 400.0, 60.0, 500.0, 40.0, 350.0);
    let (xlo, xhi) = extent(pts.iter().map(|p| p.0).chain([0.0]));
    let (ylo, yhi) = extent(pts.iter().map(|p| p.1).chain([0.0]));
    let sx = |v: f64| left + (v - xlo) / (xhi - xlo) * (right - left);
    let sy = |v: f64| bottom - (v - ylo) / (yhi - ylo) * (bottom - top);
    let mut svg = open(w, h);
    let _ = writeln!(svg, "<text x=\"{left}\" y=\"20\" font-size=\"12\">Confidence change vs recall change</text>");
    let _ = writeln!(svg, "<line x1=\"{left}\" y1=\"{0:.2}\" x2=\"{right}\" y2=\"{0:.2}\" stroke=\"#bbbbbb\"/>", sy(0.0));
    let _ = writeln!(svg, "<line x1=\"{0:.2}\" y1=\"{top}\" x2=\"{0:.2}\" y2=\"{bottom}\" stroke=\"#bbbbbb\"/>", sx(0.0));
    let _ = writeln!(svg, "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\">recall change (pp)</text>", (left + right) / 2.0, h - 12.0);
    for (r, &(x, y)) in pts.iter().enumerate() {
        let (px, py) = (sx(x), sy(y));
        let _ = writeln!(
            svg,
            "<circle cx=\"{px:.2}\" cy=\"{py:.2}\" r=\"4\" fill=\"{}\"/>",
            group_color(&csv.rows[r][gi])
        );
        value_label(&mut svg, px + 6.0, py - 4.0, "start", r, "class_index", &csv.rows[r][ci]);
        value_label(&mut svg, px + 6.0, py + 6.0, "start", r, "delta_recall_pp", &csv.rows[r][xi]);
        value_label(&mut svg, px + 6.0, py + 16.0, "start", r, "delta_confidence", &csv.rows[r][yi]);
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

/// Three panels (accuracy, N_DC, mean degraded-class change) against the
/// sweep axis, with +-1 seed-std shading. Rows whose `kind` is not `point`
/// are drawn as dashed reference lines.
pub fn sweep_svg(csv: &Csv) -> Result<String> {
    let ki = csv.col("kind")?;
    let ai = csv.col("axis_value")?;
    let panels = [
        ("accuracy", "accuracy_std", "average accuracy"),
        ("n_dc", "n_dc_std", "degraded classes"),
        ("mean_delta_dc", "mean_delta_dc_std", "mean degraded change (pp)"),
    ];
    let points: Vec<usize> = (0..csv.rows.len()).filter(|&r| csv.rows[r][ki] == "point").collect();
    let refs: Vec<usize> = (0..csv.rows.len()).filter(|&r| csv.rows[r][ki] != "point").collect();
    let xs: Vec<f64> = points.iter().map(|&r| csv.num(r, ai).map(|v| v.unwrap_or(0.0))).collect::<Result<_>>()?;
    let (xlo, xhi) = extent(xs.iter().copied());
    let (pw, ph) = (300.0, 280.0);
    let mut svg = open(pw * 3.0 + 20.0, ph + 40.0);
    for (p, (col, std_col, title)) in panels.iter().enumerate() {
        let (vi, si) = (csv.col(col)?, csv.col(std_col)?);
        let ox = 10.0 + p as f64 * pw;
        let (left, right, top, bottom) = (ox + 45.0, ox + pw - 15.0, 45.0, ph);
        let mut vals = Vec::new();
        for &r in points.iter().chain(&refs) {
            if let Some(v) = csv.num(r, vi)? {
                let s = csv.num(r, si)?.unwrap_or(0.0);
                vals.extend([v - s, v + s]);
            }
        }
        let (ylo, yhi) = extent(vals);
        let sx = |v: f64| left + (v - xlo) / (xhi - xlo) * (right - left);
        let sy = |v: f64| bottom - (v - ylo) / (yhi - ylo) * (bottom - top);
        let _ = writeln!(svg, "<text x=\"{left:.2}\" y=\"25\" font-size=\"12\">{title}</text>");
        let _ = writeln!(
            svg,
            "<rect x=\"{left:.2}\" y=\"{top}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"none\" stroke=\"#cccccc\"/>",
            right - left,
            bottom - top
        );
        let mut upper = Vec::new();
        let mut lower = Vec::new();
        let mut line = Vec::new();
        for (&r, &x) in points.iter().zip(&xs) {
            if let Some(v) = csv.num(r, vi)? {
                let s = csv.num(r, si)?.unwrap_or(0.0);
                upper.push(format!("{:.2},{:.2}", sx(x), sy(v + s)));
                lower.push(format!("{:.2},{:.2}", sx(x), sy(v - s)));
                line.push(format!("{:.2},{:.2}", sx(x), sy(v)));
            }
        }
        if !line.is_empty() {
            lower.reverse();
            let _ = writeln!(
                svg,
                "<polygon points=\"{} {}\" fill=\"#9ecae1\" fill-opacity=\"0.5\"/>",
                upper.join(" "),
                lower.join(" ")
            );
            let _ = writeln!(svg, "<polyline points=\"{}\" fill=\"none\" stroke=\"#08519c\"/>", line.join(" "));
        }
        for (&r, &x) in points.iter().zip(&xs) {
            if let Some(v) = csv.num(r, vi)? {
                let _ = writeln!(svg, "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"3\" fill=\"#08519c\"/>", sx(x), sy(v));
                value_label(&mut svg, sx(x), sy(v) - 6.0, "middle", r, col, &csv.rows[r][vi]);
            }
            value_label(&mut svg, sx(x), bottom + 14.0, "middle", r, "axis_value", &csv.rows[r][ai]);
        }
        for &r in &refs {
            if let Some(v) = csv.num(r, vi)? {
                let _ = writeln!(
                    svg,
                    "<line x1=\"{left:.2}\" y1=\"{0:.2}\" x2=\"{right:.2}\" y2=\"{0:.2}\" stroke=\"#636363\" stroke-dasharray=\"4 3\"/>",
                    sy(v)
                );
                let _ = writeln!(svg, "<text x=\"{:.2}\" y=\"{:.2}\" fill=\"#636363\">{}</text>", left + 2.0, sy(v) - 3.0, csv.rows[r][ki]);
                value_label(&mut svg, right - 2.0, sy(v) - 3.0, "end", r, col, &csv.rows[r][vi]);
            }
        }
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

/// Picks the chart type from the CSV header.
pub fn render(csv_text: &str) -> Result<String> {
    let csv = Csv::parse(csv_text)?;
    let has = |c: &str| csv.header.iter().any(|h| h == c);
    if has("kind") && has("axis_value") {
        sweep_svg(&csv)
    } else if has("delta_confidence") && has("delta_recall_pp") {
        confidence_scatter_svg(&csv)
    } else if has("delta_pp") && has("class_index") {
        delta_bar_svg(&csv)
    } else {
        Err(Error::Validation(format!("no chart for columns {:?}", csv.header)))
    }
}

/// `(row, col, text)` of every value label in an SVG produced here.
pub fn value_labels(svg: &str) -> Vec<(usize, String, String)> {
    svg.lines()
        .filter_map(|l| {
            let rest = l.strip_prefix("<text class=\"v\" data-row=\"")?;
            let (row, rest) = rest.split_once('"')?;
            let rest = rest.strip_prefix(" data-col=\"")?;
            let (col, rest) = rest.split_once('"')?;
            let text = rest.split_once('>')?.1.strip_suffix("</text>")?;
            Some((row.parse().ok()?, col.to_string(), text.to_string()))
        })
        .collect()
}

/// True when every value label equals its CSV cell.
pub fn labels_match(svg: &str, csv: &Csv) -> bool {
    value_labels(svg).iter().all(|(r, c, t)| {
        csv.col(c)
            .ok()
            .and_then(|ci| csv.rows.get(*r).map(|row| &row[ci] == t))
            .unwrap_or(false)
    })
}
