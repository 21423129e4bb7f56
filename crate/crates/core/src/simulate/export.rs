//! CSV and SVG output for trajectory batches.

use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::scenarios::Obstacle;

use super::TrajectoryBatch;

/// Writes `trajectory_id, t, x1..xn, u1..um`; the input columns of the final
/// state row are left empty.
pub fn write_csv<W: Write>(batch: &TrajectoryBatch, out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    let mut header = vec!["trajectory_id".to_string(), "t".to_string()];
    header.extend((1..=batch.n).map(|i| format!("x{i}")));
    header.extend((1..=batch.m).map(|i| format!("u{i}")));
    w.write_record(&header)?;
    let recorded = !batch.inputs.is_empty();
    for i in 0..batch.len() {
        for t in 0..=batch.horizon {
            let mut row = vec![i.to_string(), t.to_string()];
            row.extend(batch.state(i, t).iter().map(|v| format!("{v:e}")));
            if recorded && t < batch.horizon {
                row.extend(batch.input(i, t).iter().map(|v| format!("{v:e}")));
            } else {
                row.extend(std::iter::repeat_n(String::new(), batch.m));
            }
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn export_csv(batch: &TrajectoryBatch, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_csv(batch, std::io::BufWriter::new(file))
}

/// Plot coordinate: a state component or the step index.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    State(usize),
    Step,
}

/// What to draw besides the trajectories.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub x: Axis,
    pub y: Axis,
    pub obstacles: Vec<Obstacle>,
    /// Clearance drawn as a dashed ring around each disk.
    pub margin: f64,
    pub title: String,
}

impl Scene {
    /// First two state components against each other.
    pub fn planar(obstacles: Vec<Obstacle>, margin: f64, title: &str) -> Self {
        Self {
            x: Axis::State(0),
            y: Axis::State(1),
            obstacles,
            margin,
            title: title.into(),
        }
    }

    /// One state component over time.
    pub fn time_series(component: usize, title: &str) -> Self {
        Self {
            x: Axis::Step,
            y: Axis::State(component),
            obstacles: Vec::new(),
            margin: 0.0,
            title: title.into(),
        }
    }
}

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];
const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 480.0;
const PAD: f64 = 40.0;

fn coord(batch: &TrajectoryBatch, axis: Axis, i: usize, t: usize) -> Result<f64> {
    match axis {
        Axis::Step => Ok(t as f64),
        Axis::State(k) if k < batch.n => Ok(batch.state(i, t)[k]),
        Axis::State(k) => Err(Error::OutOfRange {
            what: "plotted state component".into(),
            index: k,
            len: batch.n,
        }),
    }
}

struct Frame {
    lo: [f64; 2],
    scale: [f64; 2],
}

impl Frame {
    /// Equal axes keep disks round; time series use the full canvas instead.
    fn fit(lo: [f64; 2], hi: [f64; 2], equal: bool) -> Self {
        let mut scale = [0.0; 2];
        for (k, size) in [WIDTH, HEIGHT].into_iter().enumerate() {
            scale[k] = (size - 2.0 * PAD) / (hi[k] - lo[k]).max(1e-9);
        }
        if equal {
            let s = scale[0].min(scale[1]);
            scale = [s, s];
        }
        Self { lo, scale }
    }

    fn map(&self, p: [f64; 2]) -> (f64, f64) {
        let x = PAD + (p[0] - self.lo[0]) * self.scale[0];
        let y = HEIGHT - PAD - (p[1] - self.lo[1]) * self.scale[1];
        (x, y)
    }
}

/// Static SVG 1.1 figure of the batch over `scene`.
pub fn svg_string(batch: &TrajectoryBatch, scene: &Scene) -> Result<String> {
    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    let mut grow = |p: [f64; 2], r: f64| {
        for k in 0..2 {
            lo[k] = lo[k].min(p[k] - r);
            hi[k] = hi[k].max(p[k] + r);
        }
    };
    let mut paths = Vec::with_capacity(batch.len());
    for i in 0..batch.len() {
        let mut pts = Vec::with_capacity(batch.horizon + 1);
        for t in 0..=batch.horizon {
            let p = [coord(batch, scene.x, i, t)?, coord(batch, scene.y, i, t)?];
            if p.iter().all(|v| v.is_finite()) {
                grow(p, 0.0);
                pts.push(p);
            }
        }
        paths.push(pts);
    }
    for o in &scene.obstacles {
        grow(o.center, o.radius + scene.margin);
    }
    if !lo[0].is_finite() {
        lo = [-1.0, -1.0];
        hi = [1.0, 1.0];
    }
    let equal = matches!((scene.x, scene.y), (Axis::State(_), Axis::State(_)));
    let frame = Frame::fit(lo, hi, equal);

    let mut s = String::new();
    let _ = writeln!(s, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="20" font-family="sans-serif" font-size="14" text-anchor="middle">{}</text>"#,
        WIDTH / 2.0,
        escape(&scene.title)
    );
    for o in &scene.obstacles {
        let (cx, cy) = frame.map(o.center);
        let _ = writeln!(
            s,
            r#"<circle cx="{cx:.2}" cy="{cy:.2}" r="{:.2}" fill="black"/>"#,
            o.radius * frame.scale[0]
        );
        if scene.margin > 0.0 {
            let _ = writeln!(
                s,
                r#"<circle cx="{cx:.2}" cy="{cy:.2}" r="{:.2}" fill="none" stroke="gray" stroke-dasharray="4 3"/>"#,
                (o.radius + scene.margin) * frame.scale[0]
            );
        }
    }
    for (i, pts) in paths.iter().enumerate() {
        let mut line = String::new();
        for p in pts {
            let (x, y) = frame.map(*p);
            let _ = write!(line, "{x:.2},{y:.2} ");
        }
        let _ = writeln!(
            s,
            r#"<polyline points="{}" fill="none" stroke="{}" stroke-width="1.2"/>"#,
            line.trim_end(),
            PALETTE[i % PALETTE.len()]
        );
    }
    let _ = writeln!(s, "</svg>");
    Ok(s)
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

pub fn render_svg(batch: &TrajectoryBatch, scene: &Scene, path: &Path) -> Result<()> {
    let svg = svg_string(batch, scene)?;
    std::fs::write(path, svg)?;
    Ok(())
}
