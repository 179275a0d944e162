//! SVG and CSV renderings of evaluation outputs. Panels whose inputs are
//! missing are listed as absent instead of failing the command.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use vfg::evaluate::{FidelityReport, MetricsReport};
use vfg::identify::Investigation;
use vfg::split::Ratio;

use crate::artifacts::write_json;
use crate::error::CliResult;

/// One evaluated model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedRun {
    pub name: String,
    pub ratio: Option<Ratio>,
    pub train_secondary: Option<usize>,
    pub train_other: Option<usize>,
    pub metrics: MetricsReport,
}

/// Scalar view of a fidelity report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FidelitySummary {
    pub mid_range_wasserstein: Vec<(String, f64)>,
    pub joint_total_variation: Vec<(String, f64)>,
    pub length_ks: Option<f64>,
    pub category_share_real: Vec<Vec<f64>>,
    pub category_share_generated: Vec<Vec<f64>>,
}

impl FidelitySummary {
    pub fn of(r: &FidelityReport) -> Self {
        Self {
            mid_range_wasserstein: r.mid_range.iter().map(|m| (m.variable.clone(), m.wasserstein)).collect(),
            joint_total_variation: r
                .joint
                .iter()
                .map(|j| (format!("{}~{}", j.variables.0, j.variables.1), j.total_variation))
                .collect(),
            length_ks: r.length_ks,
            category_share_real: r.category_share_real.clone(),
            category_share_generated: r.category_share_generated.clone(),
        }
    }
}

/// Contents of `metrics.json`: scalars only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsFile {
    pub runs: Vec<NamedRun>,
    pub fidelity: Option<FidelitySummary>,
}

pub const METRICS: &str = "metrics.json";
pub const FIDELITY: &str = "fidelity.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PanelStatus {
    Present,
    Absent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Panel {
    pub name: String,
    pub status: PanelStatus,
    pub files: Vec<String>,
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportSummary {
    pub panels: Vec<Panel>,
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "undefined".to_owned(), |x| format!("{x:.3}"))
}

fn csv_opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| format!("{x}"))
}

fn safe(name: &str) -> String {
    name.chars().map(|c| if c.is_ascii_alphanumeric() { c } else { '_' }).collect()
}

struct Svg {
    body: String,
    width: f64,
    height: f64,
}

impl Svg {
    fn new(width: f64, height: f64) -> Self {
        Self { body: String::new(), width, height }
    }

    fn text(&mut self, x: f64, y: f64, size: f64, anchor: &str, s: &str) {
        let s = s.replace('&', "&amp;").replace('<', "&lt;");
        let _ = writeln!(
            self.body,
            r#"<text x="{x:.1}" y="{y:.1}" font-size="{size}" text-anchor="{anchor}" font-family="sans-serif">{s}</text>"#
        );
    }

    fn rect(&mut self, x: f64, y: f64, w: f64, h: f64, fill: &str) {
        let _ = writeln!(self.body, r#"<rect x="{x:.2}" y="{y:.2}" width="{w:.2}" height="{h:.2}" fill="{fill}"/>"#);
    }

    fn polyline(&mut self, points: &[(f64, f64)], stroke: &str) {
        let pts: Vec<String> = points.iter().map(|(x, y)| format!("{x:.2},{y:.2}")).collect();
        let _ = writeln!(
            self.body,
            r#"<polyline points="{}" fill="none" stroke="{stroke}" stroke-width="1.5"/>"#,
            pts.join(" ")
        );
    }

    fn axes(&mut self, x0: f64, y0: f64, x1: f64, y1: f64) {
        let _ = writeln!(
            self.body,
            r##"<path d="M{x0:.1},{y0:.1} L{x0:.1},{y1:.1} L{x1:.1},{y1:.1}" fill="none" stroke="#333"/>"##
        );
    }

    fn finish(self) -> String {
        format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n\
             <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n{}</svg>\n",
            self.body,
            w = self.width,
            h = self.height
        )
    }
}

/// Grouped bars: one group per category, one bar per series; `None`
/// values are drawn as a hatched placeholder labelled "n/a".
fn grouped_bars(title: &str, groups: &[String], series: &[(String, Vec<Option<f64>>)]) -> String {
    let (w, h, left, top, bottom) = (640.0, 360.0, 50.0, 40.0, 60.0);
    let mut svg = Svg::new(w, h);
    svg.text(w / 2.0, 22.0, 14.0, "middle", title);
    let plot_h = h - top - bottom;
    svg.axes(left, top, w - 20.0, h - bottom);
    for tick in 0..=4 {
        let v = tick as f64 / 4.0;
        svg.text(left - 6.0, h - bottom - v * plot_h + 4.0, 10.0, "end", &format!("{v:.2}"));
    }
    let group_w = (w - left - 30.0) / groups.len().max(1) as f64;
    let bar_w = group_w * 0.8 / series.len().max(1) as f64;
    for (g, label) in groups.iter().enumerate() {
        let gx = left + 10.0 + g as f64 * group_w;
        svg.text(gx + group_w * 0.4, h - bottom + 16.0, 11.0, "middle", label);
        for (s, (_, values)) in series.iter().enumerate() {
            let x = gx + s as f64 * bar_w;
            match values.get(g).copied().flatten() {
                Some(v) => svg.rect(
                    x,
                    h - bottom - v.clamp(0.0, 1.0) * plot_h,
                    bar_w * 0.9,
                    v.clamp(0.0, 1.0) * plot_h,
                    PALETTE[s % PALETTE.len()],
                ),
                None => svg.text(x + bar_w / 2.0, h - bottom - 4.0, 9.0, "middle", "n/a"),
            }
        }
    }
    for (s, (name, _)) in series.iter().enumerate() {
        let y = h - 22.0;
        let x = left + s as f64 * 110.0;
        svg.rect(x, y - 9.0, 10.0, 10.0, PALETTE[s % PALETTE.len()]);
        svg.text(x + 14.0, y, 11.0, "start", name);
    }
    svg.finish()
}

/// Overlaid real and generated series against a shared x axis.
fn overlay(title: &str, xs: &[f64], series: &[(&str, Vec<Option<f64>>)], y_range: (f64, f64)) -> String {
    let (w, h, left, top, bottom) = (480.0, 320.0, 55.0, 40.0, 50.0);
    let mut svg = Svg::new(w, h);
    svg.text(w / 2.0, 22.0, 13.0, "middle", title);
    svg.axes(left, top, w - 15.0, h - bottom);
    let (x_lo, x_hi) = (xs.first().copied().unwrap_or(0.0), xs.last().copied().unwrap_or(1.0));
    let x_span = if x_hi > x_lo { x_hi - x_lo } else { 1.0 };
    let y_span = if y_range.1 > y_range.0 { y_range.1 - y_range.0 } else { 1.0 };
    let px = |x: f64| left + (x - x_lo) / x_span * (w - left - 20.0);
    let py = |y: f64| h - bottom - (y - y_range.0) / y_span * (h - top - bottom);
    svg.text(left - 6.0, py(y_range.1) + 4.0, 10.0, "end", &format!("{:.2}", y_range.1));
    svg.text(left - 6.0, py(y_range.0) + 4.0, 10.0, "end", &format!("{:.2}", y_range.0));
    svg.text(px(x_lo), h - bottom + 15.0, 10.0, "middle", &format!("{x_lo:.2}"));
    svg.text(px(x_hi), h - bottom + 15.0, 10.0, "middle", &format!("{x_hi:.2}"));
    for (s, (name, ys)) in series.iter().enumerate() {
        // Undefined points split the line into segments.
        let mut segment = Vec::new();
        for (x, y) in xs.iter().zip(ys) {
            match y {
                Some(y) => segment.push((px(*x), py(*y))),
                None if !segment.is_empty() => svg.polyline(&std::mem::take(&mut segment), PALETTE[s]),
                None => {}
            }
        }
        if !segment.is_empty() {
            svg.polyline(&segment, PALETTE[s]);
        }
        let x = left + s as f64 * 110.0;
        svg.rect(x, h - 20.0, 10.0, 10.0, PALETTE[s]);
        svg.text(x + 14.0, h - 11.0, 11.0, "start", name);
    }
    svg.finish()
}

/// Two heatmaps side by side on a shared colour scale.
fn heatmaps(title: &str, rows: usize, cols: usize, grids: &[(&str, &[f64])]) -> String {
    let cell = 5.0;
    let (pad, top) = (20.0, 40.0);
    let panel_w = cols as f64 * cell;
    let w = pad + grids.len() as f64 * (panel_w + pad);
    let h = top + rows as f64 * cell + 30.0;
    let mut svg = Svg::new(w, h);
    svg.text(w / 2.0, 22.0, 13.0, "middle", title);
    let max = grids.iter().flat_map(|(_, g)| g.iter().copied()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    for (k, (name, grid)) in grids.iter().enumerate() {
        let x0 = pad + k as f64 * (panel_w + pad);
        for r in 0..rows {
            for c in 0..cols {
                let v = grid[r * cols + c] / max;
                if v > 0.0 {
                    let shade = (255.0 * (1.0 - v)).round() as u8;
                    // x variable along columns would flip the row-major
                    // (x, y) layout, so rows map to x and columns to y.
                    svg.rect(
                        x0 + c as f64 * cell,
                        top + (rows - 1 - r) as f64 * cell,
                        cell,
                        cell,
                        &format!("rgb({shade},{shade},255)"),
                    );
                }
            }
        }
        svg.text(x0 + panel_w / 2.0, h - 10.0, 11.0, "middle", name);
    }
    svg.finish()
}

/// Space × time deficit map of one investigation.
pub fn contour_svg(inv: &Investigation) -> String {
    let (ns, nt) = (inv.day.n_space, inv.day.n_time);
    let mut grid = vec![0.0; ns * nt];
    for s in 0..ns {
        for t in 0..nt {
            grid[s * nt + t] = inv.day.deficit(&inv.baseline, s, t).unwrap_or(0.0).max(0.0);
        }
    }
    let mut body = heatmaps(
        &format!("speed deficit upstream of {} (space bins × 5-min bins)", inv.crash_id),
        ns,
        nt,
        &[("deficit", &grid)],
    );
    body.truncate(body.len() - "</svg>\n".len());
    for &(s, t) in &inv.region.cells {
        let _ = writeln!(
            body,
            r##"<rect x="{:.1}" y="{:.1}" width="5" height="5" fill="none" stroke="#d62728" stroke-width="0.6"/>"##,
            20.0 + t as f64 * 5.0,
            40.0 + (ns - 1 - s) as f64 * 5.0
        );
    }
    body.push_str("</svg>\n");
    body
}

fn box_panel(out: &Path, metrics: &MetricsFile) -> CliResult<Panel> {
    let boxes: Vec<String> =
        metrics.runs.first().map(|r| r.metrics.boxes.iter().map(|b| b.spec.label()).collect()).unwrap_or_default();
    let series: Vec<(String, Vec<Option<f64>>)> =
        metrics.runs.iter().map(|r| (r.name.clone(), r.metrics.boxes.iter().map(|b| b.accuracy).collect())).collect();
    let mut csv = String::from("run,box,accuracy\n");
    for r in &metrics.runs {
        for b in &r.metrics.boxes {
            let _ = writeln!(csv, "{},{},{}", r.name, b.spec.label(), csv_opt(b.accuracy));
        }
    }
    fs::write(out.join("box_accuracy.csv"), csv)?;
    fs::write(out.join("box_accuracy.svg"), grouped_bars("Joint time × distance box accuracy", &boxes, &series))?;
    Ok(present("box_accuracy", &["box_accuracy.svg", "box_accuracy.csv"]))
}

fn ratio_panel(out: &Path, metrics: &MetricsFile) -> CliResult<Panel> {
    let rows: [(&str, fn(&MetricsReport) -> Option<f64>); 7] = [
        ("Sensitivity", |m| m.classification.sensitivity),
        ("Specificity", |m| m.classification.specificity),
        ("G-mean", |m| m.classification.g_mean),
        ("Time MAE (h)", |m| m.time_gap.map(|r| r.mae)),
        ("Time RMSE (h)", |m| m.time_gap.map(|r| r.rmse)),
        ("Distance MAE (mi)", |m| m.dist_gap.map(|r| r.mae)),
        ("Distance RMSE (mi)", |m| m.dist_gap.map(|r| r.rmse)),
    ];
    let names: Vec<&str> = metrics.runs.iter().map(|r| r.name.as_str()).collect();
    let mut csv = format!("metric,{}\n", names.join(","));
    let mut md = format!("| Metric | {} |\n|---|{}\n", names.join(" | "), "---|".repeat(names.len()));
    for (label, get) in rows {
        let values: Vec<Option<f64>> = metrics.runs.iter().map(|r| get(&r.metrics)).collect();
        let _ = writeln!(csv, "{label},{}", values.iter().map(|v| csv_opt(*v)).collect::<Vec<_>>().join(","));
        let _ = writeln!(md, "| {label} | {} |", values.iter().map(|v| fmt_opt(*v)).collect::<Vec<_>>().join(" | "));
    }
    fs::write(out.join("ratio_table.csv"), csv)?;
    fs::write(out.join("ratio_table.md"), md)?;
    Ok(present("ratio_table", &["ratio_table.csv", "ratio_table.md"]))
}

fn mid_range_panel(out: &Path, f: &FidelityReport) -> CliResult<Panel> {
    let mut csv = String::from("variable,bin_lo,bin_hi,real,generated\n");
    let mut files = vec!["mid_range.csv".to_owned()];
    for m in &f.mid_range {
        let width = if m.binning.bins == 1 { 0.0 } else { (m.binning.hi - m.binning.lo) / m.binning.bins as f64 };
        let centers: Vec<f64> = (0..m.binning.bins).map(|i| m.binning.lo + (i as f64 + 0.5) * width).collect();
        for (i, (r, g)) in m.real.iter().zip(&m.generated).enumerate() {
            let lo = m.binning.lo + i as f64 * width;
            let _ = writeln!(csv, "{},{lo},{},{r},{g}", m.variable, lo + width);
        }
        let top = m.real.iter().chain(&m.generated).copied().fold(0.0, f64::max);
        let name = format!("mid_range_{}.svg", safe(&m.variable));
        let svg = overlay(
            &format!("{} mid-range (W1 = {:.3})", m.variable, m.wasserstein),
            &centers,
            &[
                ("real", m.real.iter().map(|&v| Some(v)).collect()),
                ("generated", m.generated.iter().map(|&v| Some(v)).collect()),
            ],
            (0.0, top),
        );
        fs::write(out.join(&name), svg)?;
        files.push(name);
    }
    fs::write(out.join("mid_range.csv"), csv)?;
    Ok(Panel { name: "mid_range".into(), status: PanelStatus::Present, files, note: None })
}

fn joint_panel(out: &Path, f: &FidelityReport) -> CliResult<Panel> {
    let mut files = Vec::new();
    for j in &f.joint {
        let stem = format!("joint_{}_{}", safe(&j.variables.0), safe(&j.variables.1));
        let mut csv = String::from("corpus,x_bin,y_bin,density\n");
        for (corpus, grid) in [("real", &j.real), ("generated", &j.generated)] {
            for xb in 0..j.x_binning.bins {
                for yb in 0..j.y_binning.bins {
                    let _ = writeln!(csv, "{corpus},{xb},{yb},{}", grid[xb * j.y_binning.bins + yb]);
                }
            }
        }
        fs::write(out.join(format!("{stem}.csv")), csv)?;
        let title = format!("{} vs {} (TV = {:.3})", j.variables.0, j.variables.1, j.total_variation);
        fs::write(
            out.join(format!("{stem}.svg")),
            heatmaps(&title, j.x_binning.bins, j.y_binning.bins, &[("real", &j.real), ("generated", &j.generated)]),
        )?;
        files.extend([format!("{stem}.svg"), format!("{stem}.csv")]);
    }
    Ok(Panel { name: "joint_density".into(), status: PanelStatus::Present, files, note: None })
}

fn pearson_panel(out: &Path, f: &FidelityReport) -> CliResult<Panel> {
    let mut csv = String::from("pair,step,real,generated\n");
    let mut files = vec!["pearson.csv".to_owned()];
    for p in &f.pearson {
        let pair = format!("{}~{}", p.variables.0, p.variables.1);
        for (j, (r, g)) in p.real.iter().zip(&p.generated).enumerate() {
            let _ = writeln!(csv, "{pair},{},{},{}", j + 1, csv_opt(*r), csv_opt(*g));
        }
        let steps: Vec<f64> = (1..=p.real.len()).map(|j| j as f64).collect();
        let name = format!("pearson_{}_{}.svg", safe(&p.variables.0), safe(&p.variables.1));
        fs::write(
            out.join(&name),
            overlay(
                &format!("Pearson {pair} by step"),
                &steps,
                &[("real", p.real.clone()), ("generated", p.generated.clone())],
                (-1.0, 1.0),
            ),
        )?;
        files.push(name);
    }
    fs::write(out.join("pearson.csv"), csv)?;
    Ok(Panel { name: "pearson".into(), status: PanelStatus::Present, files, note: None })
}

fn present(name: &str, files: &[&str]) -> Panel {
    Panel {
        name: name.into(),
        status: PanelStatus::Present,
        files: files.iter().map(|s| s.to_string()).collect(),
        note: None,
    }
}

fn absent(name: &str, note: String) -> Panel {
    Panel { name: name.into(), status: PanelStatus::Absent, files: Vec::new(), note: Some(note) }
}

/// Errors name only the file so the report does not depend on where the
/// run directory lives.
fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, String> {
    let name = path.file_name().map_or_else(|| path.display().to_string(), |n| n.to_string_lossy().into_owned());
    let bytes = fs::read(path).map_err(|e| format!("{name}: {e}"))?;
    serde_json::from_slice(&bytes).map_err(|e| format!("{name}: {e}"))
}

/// Renders every panel it has inputs for from `run_dir` into `out` and
/// writes `report.json`.
pub fn render(run_dir: &Path, out: &Path) -> CliResult<ReportSummary> {
    fs::create_dir_all(out)?;
    let mut panels = Vec::new();
    match read_json::<MetricsFile>(&run_dir.join(METRICS)) {
        Ok(m) if !m.runs.is_empty() => {
            panels.push(box_panel(out, &m)?);
            panels.push(ratio_panel(out, &m)?);
        }
        Ok(_) => {
            panels.push(absent("box_accuracy", "metrics.json lists no runs".into()));
            panels.push(absent("ratio_table", "metrics.json lists no runs".into()));
        }
        Err(e) => {
            panels.push(absent("box_accuracy", e.clone()));
            panels.push(absent("ratio_table", e));
        }
    }
    match read_json::<FidelityReport>(&run_dir.join(FIDELITY)) {
        Ok(f) => {
            panels.push(mid_range_panel(out, &f)?);
            panels.push(joint_panel(out, &f)?);
            panels.push(pearson_panel(out, &f)?);
        }
        Err(e) => {
            for name in ["mid_range", "joint_density", "pearson"] {
                panels.push(absent(name, e.clone()));
            }
        }
    }
    let summary = ReportSummary { panels };
    write_json(&out.join("report.json"), &summary)?;
    Ok(summary)
}
