//! On-disk formats: JSON solution records, JSON-lines branch files, CSV
//! tables and SVG figures.
//!
//! Floats are written in the shortest representation that parses back to
//! the same bits, so every format round-trips exactly.

use std::fmt::Write as _;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::continuation::{Branch, BranchEvent, ContinuationPolicy, PointDiagnostics, SweepCell, Verdict};
use crate::error::{Error, Result};
use crate::fields::{FieldGrid, Layer, StagnationKind, StagnationPoint};
use crate::model::PhysParams;
use crate::state::SolutionVector;

/// A solution with its parameters, as stored on disk.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolutionRecord {
    pub k: f64,
    #[serde(rename = "H")]
    pub depth: f64,
    pub omega0: f64,
    #[serde(rename = "N")]
    pub resolution: usize,
    pub u_hat: Vec<f64>,
    pub v_hat: Vec<f64>,
    #[serde(rename = "X_hat")]
    pub x_hat: Vec<f64>,
    #[serde(rename = "Y_hat")]
    pub y_hat: Vec<f64>,
    #[serde(rename = "L")]
    pub arclength: f64,
    pub amplitude: f64,
    pub diagnostics: Option<PointDiagnostics>,
}

impl SolutionRecord {
    pub fn new(sol: &SolutionVector, params: &PhysParams, diagnostics: Option<PointDiagnostics>) -> SolutionRecord {
        SolutionRecord {
            k: params.k,
            depth: params.depth,
            omega0: params.omega0,
            resolution: sol.resolution(),
            u_hat: sol.u_hat.clone(),
            v_hat: sol.v_hat.clone(),
            x_hat: sol.x_hat.clone(),
            y_hat: sol.y_hat.clone(),
            arclength: sol.arclength,
            amplitude: sol.amplitude(),
            diagnostics,
        }
    }

    pub fn params(&self) -> Result<PhysParams> {
        PhysParams::new(self.k, self.depth, self.omega0)
    }

    /// The solution vector, after checking the coefficient counts.
    pub fn solution(&self) -> Result<SolutionVector> {
        let n = self.resolution;
        if n < 2 || self.u_hat.len() != n || self.y_hat.len() != n || self.v_hat.len() != n - 1 || self.x_hat.len() != n - 1 {
            return Err(Error::Format(format!("record coefficient counts do not match N = {n}")));
        }
        Ok(SolutionVector {
            u_hat: self.u_hat.clone(),
            v_hat: self.v_hat.clone(),
            x_hat: self.x_hat.clone(),
            y_hat: self.y_hat.clone(),
            arclength: self.arclength,
        })
    }
}

fn with_path(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Format(format!("{}: {e}", path.display()))
}

/// Writes any serialisable value as pretty JSON.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| with_path(path, e))
}

/// Reads a JSON file; parse errors carry the line and column.
pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| with_path(path, e))?;
    serde_json::from_str(&text).map_err(|e| with_path(path, e))
}

pub fn write_record(path: &Path, record: &SolutionRecord) -> Result<()> {
    write_json(path, record)
}

pub fn read_record(path: &Path) -> Result<SolutionRecord> {
    read_json(path)
}

/// First line of a branch file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BranchHeader {
    pub format: String,
    pub params: PhysParams,
    pub policy: ContinuationPolicy,
}

const BRANCH_FORMAT: &str = "twolayer-branch/1";

impl BranchHeader {
    pub fn new(params: &PhysParams, policy: &ContinuationPolicy) -> BranchHeader {
        BranchHeader { format: BRANCH_FORMAT.into(), params: *params, policy: policy.clone() }
    }
}

/// Contents of a branch file.
#[derive(Clone, Debug, PartialEq)]
pub struct BranchLog {
    pub header: BranchHeader,
    pub events: Vec<BranchEvent>,
    /// Whether an incomplete final line was dropped.
    pub truncated: bool,
}

impl BranchLog {
    pub fn branch(&self) -> Result<Branch> {
        Branch::replay(&self.header.params, &self.header.policy, &self.events)
    }
}

/// Append-only writer for a branch file: a header line then one event per line.
pub struct BranchWriter {
    file: File,
    path: PathBuf,
}

impl BranchWriter {
    /// Creates (or replaces) a branch file holding `header` and `events`.
    pub fn create(path: &Path, header: &BranchHeader, events: &[BranchEvent]) -> Result<BranchWriter> {
        let tmp = path.with_extension("jsonl.tmp");
        {
            let mut f = File::create(&tmp).map_err(|e| with_path(&tmp, e))?;
            let mut text = serde_json::to_string(header)?;
            text.push('\n');
            for ev in events {
                text.push_str(&serde_json::to_string(ev)?);
                text.push('\n');
            }
            f.write_all(text.as_bytes()).map_err(|e| with_path(&tmp, e))?;
            f.sync_all().map_err(|e| with_path(&tmp, e))?;
        }
        fs::rename(&tmp, path).map_err(|e| with_path(path, e))?;
        let file = OpenOptions::new().append(true).open(path).map_err(|e| with_path(path, e))?;
        Ok(BranchWriter { file, path: path.to_path_buf() })
    }

    pub fn append(&mut self, event: &BranchEvent) -> Result<()> {
        let mut line = serde_json::to_string(event)?;
        line.push('\n');
        self.file.write_all(line.as_bytes()).map_err(|e| with_path(&self.path, e))?;
        self.file.flush().map_err(|e| with_path(&self.path, e))
    }
}

/// Reads a branch file. A damaged last line, as left by an interrupted
/// run, is dropped; damage anywhere else is an error.
pub fn read_branch(path: &Path) -> Result<BranchLog> {
    let f = File::open(path).map_err(|e| with_path(path, e))?;
    let mut lines = Vec::new();
    for line in BufReader::new(f).lines() {
        lines.push(line.map_err(|e| with_path(path, e))?);
    }
    while lines.last().is_some_and(|l| l.trim().is_empty()) {
        lines.pop();
    }
    let Some(first) = lines.first() else {
        return Err(with_path(path, "empty branch file"));
    };
    let header: BranchHeader = serde_json::from_str(first).map_err(|e| with_path(path, format!("line 1: {e}")))?;
    if header.format != BRANCH_FORMAT {
        return Err(with_path(path, format!("unknown branch format {:?}", header.format)));
    }
    let mut events = Vec::new();
    let mut truncated = false;
    let last = lines.len() - 1;
    for (i, line) in lines.iter().enumerate().skip(1) {
        match serde_json::from_str::<BranchEvent>(line) {
            Ok(ev) => events.push(ev),
            Err(_) if i == last => truncated = true,
            Err(e) => return Err(with_path(path, format!("line {}: {e}", i + 1))),
        }
    }
    Ok(BranchLog { header, events, truncated })
}

fn layer_code(layer: Layer) -> u8 {
    match layer {
        Layer::Lower => 0,
        Layer::Upper => 1,
    }
}

/// Field grid as CSV with columns `x,y,U,V,Psi,layer` (layer 0 below the interface).
pub fn field_csv(grid: &FieldGrid) -> String {
    let mut out = String::from("x,y,U,V,Psi,layer\n");
    for j in 0..grid.ny() {
        for i in 0..grid.nx() {
            let id = grid.idx(i, j);
            let _ = writeln!(out, "{},{},{},{},{},{}", grid.x[i], grid.y[j], grid.u[id], grid.v[id], grid.psi[id], layer_code(grid.layer[id]));
        }
    }
    out
}

/// One row of a field CSV.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FieldRow {
    pub x: f64,
    pub y: f64,
    pub u: f64,
    pub v: f64,
    pub psi: f64,
    pub layer: Layer,
}

fn parse_f64(s: &str, line: usize) -> Result<f64> {
    s.trim().parse().map_err(|_| Error::Format(format!("line {line}: bad number {s:?}")))
}

pub fn parse_field_csv(text: &str) -> Result<Vec<FieldRow>> {
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        let c: Vec<&str> = line.split(',').collect();
        if c.len() != 6 {
            return Err(Error::Format(format!("line {}: expected 6 columns", i + 1)));
        }
        let layer = match c[5].trim() {
            "0" => Layer::Lower,
            "1" => Layer::Upper,
            s => return Err(Error::Format(format!("line {}: bad layer {s:?}", i + 1))),
        };
        rows.push(FieldRow {
            x: parse_f64(c[0], i + 1)?,
            y: parse_f64(c[1], i + 1)?,
            u: parse_f64(c[2], i + 1)?,
            v: parse_f64(c[3], i + 1)?,
            psi: parse_f64(c[4], i + 1)?,
            layer,
        });
    }
    Ok(rows)
}

/// Sweep map as CSV with columns `H,omega0,verdict,max_amplitude,points,note`.
pub fn sweep_csv(cells: &[SweepCell]) -> String {
    let mut out = String::from("H,omega0,verdict,max_amplitude,points,note\n");
    for c in cells {
        let note = c.note.as_deref().unwrap_or("").replace([',', '\n'], ";");
        let _ = writeln!(out, "{},{},{},{},{},{}", c.depth, c.omega0, c.verdict.label(), c.max_amplitude, c.points, note);
    }
    out
}

/// `(H, ω₀, verdict, max amplitude)` rows of a sweep CSV.
pub fn parse_sweep_csv(text: &str) -> Result<Vec<(f64, f64, Verdict, f64)>> {
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        let c: Vec<&str> = line.splitn(6, ',').collect();
        if c.len() < 4 {
            return Err(Error::Format(format!("line {}: expected at least 4 columns", i + 1)));
        }
        let verdict = Verdict::from_label(c[2].trim()).ok_or_else(|| Error::Format(format!("line {}: unknown verdict {:?}", i + 1, c[2])))?;
        rows.push((parse_f64(c[0], i + 1)?, parse_f64(c[1], i + 1)?, verdict, parse_f64(c[3], i + 1)?));
    }
    Ok(rows)
}

/// Everything drawn in a flow figure, in physical coordinates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowFigure {
    pub params: PhysParams,
    pub amplitude: f64,
    pub interface: Vec<(f64, f64)>,
    pub streamlines: Vec<Streamline>,
    /// Saddles and centres; degenerate points are counted but not listed.
    pub stagnation: Vec<StagnationPoint>,
    pub degenerate_stagnation: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Streamline {
    pub level: f64,
    pub points: Vec<(f64, f64)>,
}

impl FlowFigure {
    pub fn new(
        params: &PhysParams,
        amplitude: f64,
        interface: Vec<(f64, f64)>,
        streamlines: Vec<(f64, Vec<(f64, f64)>)>,
        stagnation: Vec<StagnationPoint>,
    ) -> FlowFigure {
        let degenerate = stagnation.iter().filter(|s| s.kind == StagnationKind::Degenerate).count();
        FlowFigure {
            params: *params,
            amplitude,
            interface,
            streamlines: streamlines.into_iter().map(|(level, points)| Streamline { level, points }).collect(),
            stagnation: stagnation.into_iter().filter(|s| s.kind != StagnationKind::Degenerate).collect(),
            degenerate_stagnation: degenerate,
        }
    }
}

/// Maps channel coordinates to the SVG canvas.
struct Frame {
    left: f64,
    top: f64,
    width: f64,
    height: f64,
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Frame {
    fn px(&self, x: f64) -> f64 {
        self.left + (x - self.x0) / (self.x1 - self.x0) * self.width
    }

    fn py(&self, y: f64) -> f64 {
        self.top + (self.y1 - y) / (self.y1 - self.y0) * self.height
    }

    fn path(&self, pts: &[(f64, f64)]) -> String {
        let mut d = String::new();
        for (i, &(x, y)) in pts.iter().enumerate() {
            let _ = write!(d, "{}{:.2},{:.2}", if i == 0 { "M" } else { " L" }, self.px(x), self.py(y));
        }
        d
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Streamline figure: walls and interface in black, streamlines in grey,
/// stagnation points as black dots.
pub fn flow_svg(fig: &FlowFigure) -> String {
    let lambda = fig.params.wavelength();
    let width = 720.0;
    let height = (width / lambda).clamp(120.0, 720.0);
    let frame = Frame { left: 40.0, top: 30.0, width, height, x0: 0.0, x1: lambda, y0: 0.0, y1: 1.0 };
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{}" height="{}" viewBox="0 0 {} {}">"#,
        width + 80.0,
        height + 70.0,
        width + 80.0,
        height + 70.0
    );
    let p = &fig.params;
    let _ = writeln!(
        s,
        r#"<title>{}</title>"#,
        escape(&format!("k = {}, H = {}, omega0 = {}, A = {}", p.k, p.depth, p.omega0, fig.amplitude))
    );
    let _ = writeln!(s, r#"<rect x="0" y="0" width="{}" height="{}" fill="white"/>"#, width + 80.0, height + 70.0);
    let _ = writeln!(s, r#"<g fill="none" stroke="grey" stroke-width="0.8">"#);
    for line in &fig.streamlines {
        if line.points.len() >= 2 {
            let _ = writeln!(s, r#"<path d="{}"/>"#, frame.path(&line.points));
        }
    }
    let _ = writeln!(s, "</g>");
    let _ = writeln!(s, r#"<g fill="none" stroke="black" stroke-width="1.6">"#);
    let _ = writeln!(s, r#"<path d="{}"/>"#, frame.path(&fig.interface));
    let _ = writeln!(s, r#"<path d="{}"/>"#, frame.path(&[(0.0, 0.0), (lambda, 0.0)]));
    let _ = writeln!(s, r#"<path d="{}"/>"#, frame.path(&[(0.0, 1.0), (lambda, 1.0)]));
    let _ = writeln!(s, "</g>");
    let _ = writeln!(s, r#"<g fill="black">"#);
    for sp in &fig.stagnation {
        let _ = writeln!(s, r#"<circle cx="{:.2}" cy="{:.2}" r="3"/>"#, frame.px(sp.x), frame.py(sp.y));
    }
    let _ = writeln!(s, "</g>");
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" font-family="sans-serif" font-size="12">x</text>"#,
        frame.left + width / 2.0,
        frame.top + height + 30.0
    );
    let _ = writeln!(s, r#"<text x="12" y="{:.1}" font-family="sans-serif" font-size="12">y</text>"#, frame.top + height / 2.0);
    s.push_str("</svg>\n");
    s
}

/// Parameter-space map: up triangles for corners at the crest, down
/// triangles for corners at the trough, squares for wall approach (filled
/// for the upper wall), small circles when undecided.
pub fn sweep_svg(k: f64, cells: &[SweepCell]) -> String {
    let span = |f: fn(&SweepCell) -> f64| {
        let lo = cells.iter().map(f).fold(f64::INFINITY, f64::min);
        let hi = cells.iter().map(f).fold(f64::NEG_INFINITY, f64::max);
        if hi > lo {
            let pad = 0.08 * (hi - lo);
            (lo - pad, hi + pad)
        } else {
            (lo - 0.5, hi + 0.5)
        }
    };
    let (h0, h1) = span(|c| c.depth);
    let (w0, w1) = span(|c| c.omega0);
    let frame = Frame { left: 60.0, top: 30.0, width: 480.0, height: 480.0, x0: h0, x1: h1, y0: w0, y1: w1 };
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="600" height="580" viewBox="0 0 600 580">"#);
    let _ = writeln!(s, r#"<title>{}</title>"#, escape(&format!("limiting solutions, k = {k}")));
    let _ = writeln!(s, r#"<rect x="0" y="0" width="600" height="580" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<rect x="{}" y="{}" width="{}" height="{}" fill="none" stroke="black"/>"#,
        frame.left, frame.top, frame.width, frame.height
    );
    let r = 6.0;
    for c in cells {
        let (x, y) = (frame.px(c.depth), frame.py(c.omega0));
        let glyph = match c.verdict {
            Verdict::TypeICrest => format!(r#"<polygon points="{:.2},{:.2} {:.2},{:.2} {:.2},{:.2}" fill="black"/>"#, x, y - r, x - r, y + r, x + r, y + r),
            Verdict::TypeITrough => format!(r#"<polygon points="{:.2},{:.2} {:.2},{:.2} {:.2},{:.2}" fill="black"/>"#, x, y + r, x - r, y - r, x + r, y - r),
            Verdict::TypeIIUpper => format!(r#"<rect x="{:.2}" y="{:.2}" width="{}" height="{}" fill="black"/>"#, x - r, y - r, 2.0 * r, 2.0 * r),
            Verdict::TypeIILower => format!(r#"<rect x="{:.2}" y="{:.2}" width="{}" height="{}" fill="white" stroke="black"/>"#, x - r, y - r, 2.0 * r, 2.0 * r),
            Verdict::Undetermined | Verdict::ResolutionLimit => format!(r#"<circle cx="{x:.2}" cy="{y:.2}" r="2.5" fill="none" stroke="black"/>"#),
        };
        let _ = writeln!(s, "{glyph}");
    }
    let label = |s: &mut String, x: f64, y: f64, t: &str| {
        let _ = writeln!(s, r#"<text x="{x:.1}" y="{y:.1}" font-family="sans-serif" font-size="12" text-anchor="middle">{}</text>"#, escape(t));
    };
    label(&mut s, frame.left + frame.width / 2.0, frame.top + frame.height + 40.0, "H");
    label(&mut s, 20.0, frame.top + frame.height / 2.0, "omega0");
    label(&mut s, frame.left, frame.top + frame.height + 18.0, &format!("{:.3}", h0));
    label(&mut s, frame.left + frame.width, frame.top + frame.height + 18.0, &format!("{:.3}", h1));
    label(&mut s, frame.left - 25.0, frame.top + frame.height, &format!("{:.3}", w0));
    label(&mut s, frame.left - 25.0, frame.top + 10.0, &format!("{:.3}", w1));
    s.push_str("</svg>\n");
    s
}

/// Stem for output names: `k{k}_H{H}_w{omega0}`.
pub fn params_tag(params: &PhysParams) -> String {
    format!("k{}_H{}_w{}", params.k, params.depth, params.omega0)
}

/// Stem for a solution: the parameter tag plus `_A{amplitude}`, the
/// amplitude rounded to ten decimals so roundoff does not leak into names.
pub fn solution_tag(params: &PhysParams, amplitude: f64) -> String {
    let a = (amplitude * 1e10).round() / 1e10;
    format!("{}_A{}", params_tag(params), if a == 0.0 { 0.0 } else { a })
}
