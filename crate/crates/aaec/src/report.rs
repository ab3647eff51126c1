//! Result files: run logs, benchmark summaries, and exposure sweeps as CSV
//! (with a schema stamp so readers can reject foreign files), plus a
//! self-contained SVG plotter for run logs.
//!
//! All writes are atomic: content goes to a temp file in the target
//! directory and is renamed into place, so a crash never leaves a torn
//! file behind.

use std::collections::HashMap;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::eval::RunSummary;
use crate::imgproc::Rect;
use crate::sim::{RunRecord, RunResult, SweepPoint};

pub const RUN_SCHEMA: &str = "aaec-run-v1";
pub const SUMMARY_SCHEMA: &str = "aaec-summary-v1";
pub const SWEEP_SCHEMA: &str = "aaec-sweep-v1";

pub const RUN_HEADER: [&str; 19] = [
    "frame", "t_s", "dt_ms", "m", "dhat", "v", "found", "roi_x", "roi_y", "roi_w", "roi_h",
    "sat_frac", "det_x_m", "det_y_m", "det_z_m", "reproj_px", "gt_x_m", "gt_y_m", "gt_z_m",
];

pub const SUMMARY_HEADER: [&str; 9] = [
    "scenario", "controller", "seed", "cov_det", "detection_rate", "traj_dist_m",
    "max_pairwise_dist_m", "conv_frames", "conv_seconds",
];

pub const SWEEP_HEADER: [&str; 6] = ["scenario", "dt_ms", "m_roi", "m_full", "found", "is_argmax"];

/// Write `bytes` to `path` atomically (temp file + rename).
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let err = |e: std::io::Error| Error::io(path.display().to_string(), e);
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(err)?;
    tmp.write_all(bytes).map_err(err)?;
    tmp.flush().map_err(err)?;
    tmp.persist(path).map_err(|e| err(e.error))?;
    Ok(())
}

fn fmt_opt(v: Option<f64>) -> String {
    match v {
        Some(x) if x.is_nan() => "nan".to_string(),
        Some(x) => x.to_string(),
        None => "nan".to_string(),
    }
}

/// Serialize a run to CSV: schema line, meta line, header, one row per
/// frame. Detection columns are empty on frames without a detection.
pub fn run_csv_bytes(result: &RunResult) -> Vec<u8> {
    let mut out = String::new();
    out.push_str(&format!("# schema {RUN_SCHEMA}\n"));
    out.push_str(&format!(
        "# meta scenario={} controller={} motion={} seed={} fps={}\n",
        result.scenario.name(),
        result.controller.name(),
        result.motion.name(),
        result.seed,
        result.fps
    ));
    out.push_str(&RUN_HEADER.join(","));
    out.push('\n');
    for r in &result.records {
        let (dx, dy, dz, rp) = match (r.det_t, r.reproj_px) {
            (Some(t), Some(e)) => (t.x.to_string(), t.y.to_string(), t.z.to_string(), e.to_string()),
            _ => (String::new(), String::new(), String::new(), String::new()),
        };
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
            r.frame,
            r.t_s,
            r.dt_ms,
            r.m,
            r.dhat,
            r.velocity,
            u8::from(r.found),
            r.roi.x,
            r.roi.y,
            r.roi.w,
            r.roi.h,
            r.sat_frac,
            dx,
            dy,
            dz,
            rp,
            r.gt_t.x,
            r.gt_t.y,
            r.gt_t.z
        ));
    }
    out.into_bytes()
}

pub fn write_run_csv(path: &Path, result: &RunResult) -> Result<()> {
    atomic_write(path, &run_csv_bytes(result))
}

/// Serialize benchmark summaries. Missing covariance or convergence values
/// render as "nan" / empty so the column count stays fixed.
pub fn summary_csv_bytes(rows: &[RunSummary]) -> Vec<u8> {
    let mut out = String::new();
    out.push_str(&format!("# schema {SUMMARY_SCHEMA}\n"));
    out.push_str(&SUMMARY_HEADER.join(","));
    out.push('\n');
    for s in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            s.scenario,
            s.controller,
            s.seed,
            fmt_opt(s.cov_det),
            s.detection_rate,
            fmt_opt(s.traj_dist_m),
            s.max_pairwise_dist_m,
            s.conv_frames.map(|v| v.to_string()).unwrap_or_default(),
            s.conv_seconds.map(|v| v.to_string()).unwrap_or_default(),
        ));
    }
    out.into_bytes()
}

pub fn write_summary_csv(path: &Path, rows: &[RunSummary]) -> Result<()> {
    atomic_write(path, &summary_csv_bytes(rows))
}

/// Serialize exposure sweeps, flagging each scenario's metric argmax row.
pub fn sweep_csv_bytes(sweeps: &[(String, Vec<SweepPoint>)]) -> Vec<u8> {
    let mut out = String::new();
    out.push_str(&format!("# schema {SWEEP_SCHEMA}\n"));
    out.push_str(&SWEEP_HEADER.join(","));
    out.push('\n');
    for (scenario, pts) in sweeps {
        let argmax = pts
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.m_roi.partial_cmp(&b.1.m_roi).unwrap())
            .map(|(i, _)| i);
        for (i, p) in pts.iter().enumerate() {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                scenario,
                p.dt_ms,
                p.m_roi,
                p.m_full,
                u8::from(p.found),
                u8::from(Some(i) == argmax)
            ));
        }
    }
    out.into_bytes()
}

pub fn write_sweep_csv(path: &Path, sweeps: &[(String, Vec<SweepPoint>)]) -> Result<()> {
    atomic_write(path, &sweep_csv_bytes(sweeps))
}

/// A run log read back from CSV.
#[derive(Debug, Clone)]
pub struct RunCsv {
    pub path: PathBuf,
    pub scenario: String,
    pub controller: String,
    pub motion: String,
    pub seed: u64,
    pub fps: f64,
    pub rows: Vec<RunRecord>,
}

fn csv_err(path: &Path, msg: impl std::fmt::Display) -> Error {
    Error::CsvFormat { path: path.display().to_string(), msg: msg.to_string() }
}

/// Read a run CSV produced by [`write_run_csv`].
pub fn read_run_csv(path: &Path) -> Result<RunCsv> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut lines = text.lines();
    let schema = lines.next().unwrap_or_default();
    if schema.trim() != format!("# schema {RUN_SCHEMA}") {
        return Err(csv_err(path, format!("expected '# schema {RUN_SCHEMA}', got '{schema}'")));
    }
    let meta_line = lines.next().unwrap_or_default();
    let meta = parse_meta(meta_line).ok_or_else(|| csv_err(path, "missing '# meta' line"))?;
    let header = lines.next().unwrap_or_default();
    if header != RUN_HEADER.join(",") {
        return Err(csv_err(path, "unexpected column header"));
    }

    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != RUN_HEADER.len() {
            return Err(csv_err(path, format!("row {}: expected {} fields, got {}", i + 4, RUN_HEADER.len(), fields.len())));
        }
        let fx = |j: usize| -> Result<f64> {
            fields[j]
                .parse::<f64>()
                .map_err(|_| csv_err(path, format!("row {}: bad number '{}'", i + 4, fields[j])))
        };
        let ux = |j: usize| -> Result<u32> {
            fields[j]
                .parse::<u32>()
                .map_err(|_| csv_err(path, format!("row {}: bad integer '{}'", i + 4, fields[j])))
        };
        let found = fields[6] == "1";
        let det_t = if found && !fields[12].is_empty() {
            Some(Vector3::new(fx(12)?, fx(13)?, fx(14)?))
        } else {
            None
        };
        let reproj_px = if found && !fields[15].is_empty() { Some(fx(15)?) } else { None };
        rows.push(RunRecord {
            frame: ux(0)?,
            t_s: fx(1)?,
            dt_ms: fx(2)?,
            m: fx(3)?,
            dhat: fx(4)?,
            velocity: fx(5)?,
            found,
            roi: Rect::new(ux(7)?, ux(8)?, ux(9)?, ux(10)?)?,
            sat_frac: fx(11)?,
            det_t,
            reproj_px,
            gt_t: Vector3::new(fx(16)?, fx(17)?, fx(18)?),
        });
    }
    Ok(RunCsv {
        path: path.to_path_buf(),
        scenario: meta.get("scenario").cloned().unwrap_or_default(),
        controller: meta.get("controller").cloned().unwrap_or_default(),
        motion: meta.get("motion").cloned().unwrap_or_default(),
        seed: meta.get("seed").and_then(|s| s.parse().ok()).unwrap_or(0),
        fps: meta.get("fps").and_then(|s| s.parse().ok()).unwrap_or(20.0),
        rows,
    })
}

fn parse_meta(line: &str) -> Option<HashMap<String, String>> {
    let rest = line.strip_prefix("# meta ")?;
    let mut map = HashMap::new();
    for pair in rest.split_whitespace() {
        let (k, v) = pair.split_once('=')?;
        map.insert(k.to_string(), v.to_string());
    }
    Some(map)
}

/// Per-controller plot colors (fallback gray for unknown labels).
pub fn controller_color(controller: &str) -> &'static str {
    match controller {
        "aaec" => "#d62728",
        "aec" => "#1f77b4",
        "gec" => "#2ca02c",
        "default" => "#9467bd",
        _ => "#7f7f7f",
    }
}

struct Panel {
    title: String,
    x_label: String,
    y_label: String,
    /// (label, color, points, connect-with-line)
    series: Vec<(String, &'static str, Vec<(f64, f64)>, bool)>,
    log_y: bool,
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn render_panel(out: &mut String, p: &Panel, ox: f64, oy: f64, w: f64, h: f64) {
    let ml = 62.0; // left margin inside panel for axis labels
    let mb = 40.0;
    let mt = 26.0;
    let mr = 12.0;
    let (px0, py0) = (ox + ml, oy + mt);
    let (pw, ph) = (w - ml - mr, h - mt - mb);

    let tf = |v: f64, log: bool| if log { v.log10() } else { v };
    let all: Vec<(f64, f64)> = p
        .series
        .iter()
        .flat_map(|s| s.2.iter().map(|&(x, y)| (x, tf(y, p.log_y))))
        .filter(|(x, y)| x.is_finite() && y.is_finite())
        .collect();
    out.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" font-size=\"13\" font-weight=\"bold\">{}</text>\n",
        ox + ml,
        oy + 16.0,
        esc(&p.title)
    ));
    out.push_str(&format!(
        "<rect x=\"{px0}\" y=\"{py0}\" width=\"{pw}\" height=\"{ph}\" fill=\"none\" stroke=\"#444\"/>\n"
    ));
    if all.is_empty() {
        out.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-size=\"12\" fill=\"#666\">no data</text>\n",
            px0 + pw / 2.0 - 24.0,
            py0 + ph / 2.0
        ));
        return;
    }
    let (mut x0, mut x1) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in &all {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if (x1 - x0).abs() < 1e-12 {
        x0 -= 1.0;
        x1 += 1.0;
    }
    if (y1 - y0).abs() < 1e-12 {
        y0 -= 1.0;
        y1 += 1.0;
    }
    let padx = 0.04 * (x1 - x0);
    let pady = 0.06 * (y1 - y0);
    let (x0, x1, y0, y1) = (x0 - padx, x1 + padx, y0 - pady, y1 + pady);
    let sx = |x: f64| px0 + (x - x0) / (x1 - x0) * pw;
    let sy = |y: f64| py0 + ph - (y - y0) / (y1 - y0) * ph;

    // Ticks: 5 per axis.
    for i in 0..=4 {
        let fx = x0 + (x1 - x0) * i as f64 / 4.0;
        let fy = y0 + (y1 - y0) * i as f64 / 4.0;
        let gx = sx(fx);
        let gy = sy(fy);
        out.push_str(&format!(
            "<line x1=\"{gx}\" y1=\"{}\" x2=\"{gx}\" y2=\"{}\" stroke=\"#444\"/>\n",
            py0 + ph,
            py0 + ph + 4.0
        ));
        out.push_str(&format!(
            "<text x=\"{gx}\" y=\"{}\" font-size=\"10\" text-anchor=\"middle\">{}</text>\n",
            py0 + ph + 16.0,
            format_tick(fx)
        ));
        out.push_str(&format!(
            "<line x1=\"{}\" y1=\"{gy}\" x2=\"{px0}\" y2=\"{gy}\" stroke=\"#444\"/>\n",
            px0 - 4.0
        ));
        let label = if p.log_y { format_tick(10f64.powf(fy)) } else { format_tick(fy) };
        out.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-size=\"10\" text-anchor=\"end\">{label}</text>\n",
            px0 - 6.0,
            gy + 3.5
        ));
    }
    out.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" font-size=\"11\" text-anchor=\"middle\">{}</text>\n",
        px0 + pw / 2.0,
        oy + h - 8.0,
        esc(&p.x_label)
    ));
    out.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" font-size=\"11\" text-anchor=\"middle\" transform=\"rotate(-90 {} {})\">{}</text>\n",
        ox + 14.0,
        py0 + ph / 2.0,
        ox + 14.0,
        py0 + ph / 2.0,
        esc(&p.y_label)
    ));

    for (_, color, pts, connect) in &p.series {
        let mapped: Vec<(f64, f64)> = pts
            .iter()
            .map(|&(x, y)| (x, tf(y, p.log_y)))
            .filter(|(x, y)| x.is_finite() && y.is_finite())
            .map(|(x, y)| (sx(x), sy(y)))
            .collect();
        if *connect && mapped.len() > 1 {
            let path: Vec<String> = mapped.iter().map(|(x, y)| format!("{x:.2},{y:.2}")).collect();
            out.push_str(&format!(
                "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.4\"/>\n",
                path.join(" ")
            ));
        } else {
            for (x, y) in mapped {
                out.push_str(&format!("<circle cx=\"{x:.2}\" cy=\"{y:.2}\" r=\"1.8\" fill=\"{color}\"/>\n"));
            }
        }
    }
}

fn format_tick(v: f64) -> String {
    if v == 0.0 {
        return "0".to_string();
    }
    let a = v.abs();
    if a >= 1000.0 || a < 0.001 {
        format!("{v:.1e}")
    } else if a >= 10.0 {
        format!("{v:.1}")
    } else {
        format!("{v:.3}")
    }
}

fn single_panel_svg(panel: Panel, runs: &[RunCsv]) -> String {
    let width = 720.0;
    let panel_h = 300.0;
    let legend_h = 22.0 * runs.len() as f64 + 16.0;
    let height = panel_h + legend_h + 12.0;
    let mut body = String::new();
    render_panel(&mut body, &panel, 0.0, 0.0, width, panel_h);
    let ly = panel_h + 10.0;
    for (i, r) in runs.iter().enumerate() {
        let y = ly + 22.0 * i as f64;
        let color = controller_color(&r.controller);
        body.push_str(&format!("<rect x=\"70\" y=\"{y}\" width=\"14\" height=\"14\" fill=\"{color}\"/>\n"));
        body.push_str(&format!(
            "<text x=\"92\" y=\"{}\" font-size=\"12\">{}</text>\n",
            y + 11.0,
            esc(&format!("{} / {} / motion {} / seed {}", r.scenario, r.controller, r.motion, r.seed))
        ));
    }
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" \
         viewBox=\"0 0 {width} {height}\" font-family=\"sans-serif\">\n\
         <rect width=\"{width}\" height=\"{height}\" fill=\"white\"/>\n{body}</svg>\n"
    )
}

/// Render run logs into three SVG documents: detected-position scatter in
/// the camera x/y and x/z planes, and the exposure trace. Returns
/// (file name, svg) pairs; one color per controller.
pub fn plot_svgs(runs: &[RunCsv]) -> Vec<(&'static str, String)> {
    let mut xy = Vec::new();
    let mut xz = Vec::new();
    let mut dt = Vec::new();
    for r in runs {
        let label = format!("{}/{}/seed{}", r.scenario, r.controller, r.seed);
        let color = controller_color(&r.controller);
        let det_xy: Vec<(f64, f64)> =
            r.rows.iter().filter_map(|row| row.det_t.map(|t| (t.x, t.y))).collect();
        let det_xz: Vec<(f64, f64)> =
            r.rows.iter().filter_map(|row| row.det_t.map(|t| (t.x, t.z))).collect();
        let trace: Vec<(f64, f64)> = r.rows.iter().map(|row| (row.frame as f64, row.dt_ms)).collect();
        xy.push((label.clone(), color, det_xy, false));
        xz.push((label.clone(), color, det_xz, false));
        dt.push((label, color, trace, true));
    }
    vec![
        (
            "positions_xy.svg",
            single_panel_svg(
                Panel {
                    title: "Detected marker position (camera x/y)".into(),
                    x_label: "x (m)".into(),
                    y_label: "y (m)".into(),
                    series: xy,
                    log_y: false,
                },
                runs,
            ),
        ),
        (
            "positions_xz.svg",
            single_panel_svg(
                Panel {
                    title: "Detected marker position (camera x/z)".into(),
                    x_label: "x (m)".into(),
                    y_label: "z (m)".into(),
                    series: xz,
                    log_y: false,
                },
                runs,
            ),
        ),
        (
            "exposure_trace.svg",
            single_panel_svg(
                Panel {
                    title: "Exposure trace".into(),
                    x_label: "frame".into(),
                    y_label: "dt (ms, log)".into(),
                    series: dt,
                    log_y: true,
                },
                runs,
            ),
        ),
    ]
}

/// Write the three plot SVGs into `dir`.
pub fn write_plot_svgs(dir: &Path, runs: &[RunCsv]) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    for (name, svg) in plot_svgs(runs) {
        let path = dir.join(name);
        atomic_write(&path, svg.as_bytes())?;
        written.push(path);
    }
    Ok(written)
}
