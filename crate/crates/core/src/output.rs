//! Result emission: trajectory tables, static line plots and per-frame body
//! geometry. Everything here is a pure function of its inputs so reruns are
//! byte-identical.

use std::fmt::Write as _;

use nalgebra::{DVector, Vector3};
use serde::Serialize;

use crate::dynamics::Trajectory;
use crate::kinematics::Multibody;

/// Series longer than this are thinned before plotting.
pub const MAX_PLOT_POINTS: usize = 2000;

const WIDTH: f64 = 800.0;
const HEIGHT: f64 = 500.0;
const LEFT: f64 = 80.0;
const RIGHT: f64 = 170.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 60.0;
const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

/// `t,q_<id>…,qd_<id>…,constraint_err,ke,pe` with one row per sample.
pub fn trajectory_csv(traj: &Trajectory) -> String {
    let mut out = String::from("t");
    for id in &traj.joint_ids {
        write!(out, ",q_{id}").unwrap();
    }
    for id in &traj.joint_ids {
        write!(out, ",qd_{id}").unwrap();
    }
    out.push_str(",constraint_err,ke,pe\n");
    for s in &traj.samples {
        write!(out, "{:.16e}", s.state.t).unwrap();
        for v in s.state.q.iter().chain(s.state.qdot.iter()) {
            write!(out, ",{v:.16e}").unwrap();
        }
        writeln!(
            out,
            ",{:.16e},{:.16e},{:.16e}",
            s.constraint_error, s.kinetic, s.potential
        )
        .unwrap();
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
    /// Dashed stroke.
    pub dashed: bool,
}

impl Series {
    pub fn new(label: impl Into<String>, x: &[f64], y: &[f64]) -> Self {
        Self {
            label: label.into(),
            points: x.iter().copied().zip(y.iter().copied()).collect(),
            dashed: false,
        }
    }

    pub fn dashed(self) -> Self {
        Self {
            dashed: true,
            ..self
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Plot {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<Series>,
}

/// Tick positions on a 1-2-5 grid covering `[lo, hi]` with about `target`
/// intervals.
pub fn nice_ticks(lo: f64, hi: f64, target: usize) -> Vec<f64> {
    let span = hi - lo;
    if !(span > 0.0) || !span.is_finite() {
        return vec![lo];
    }
    let raw = span / target.max(1) as f64;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0]
        .iter()
        .map(|m| m * mag)
        .find(|s| *s >= raw * (1.0 - 1e-12))
        .unwrap_or(10.0 * mag);
    let first = (lo / step - 1e-9).ceil() as i64;
    let last = (hi / step + 1e-9).floor() as i64;
    (first..=last).map(|i| i as f64 * step).collect()
}

fn tick_label(v: f64, step: f64) -> String {
    let decimals = (-step.log10().floor()).max(0.0) as usize;
    let s = format!("{v:.decimals$}");
    // avoid "-0" and "-0.00"
    if s.trim_start_matches('-').chars().all(|c| c == '0' || c == '.') {
        s.trim_start_matches('-').to_string()
    } else {
        s
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Every `k`-th point plus the last, so at most about `max` remain.
pub fn thin(points: &[(f64, f64)], max: usize) -> Vec<(f64, f64)> {
    if points.len() <= max || max < 2 {
        return points.to_vec();
    }
    let stride = points.len().div_ceil(max - 1);
    let mut out: Vec<(f64, f64)> = points.iter().step_by(stride).copied().collect();
    if out.last() != points.last() {
        out.push(*points.last().unwrap());
    }
    out
}

fn raw_range(values: impl Iterator<Item = f64>) -> Option<(f64, f64)> {
    let (lo, hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    lo.is_finite().then_some((lo, hi))
}

fn padded_range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let Some((lo, hi)) = raw_range(values) else {
        return (-1.0, 1.0);
    };
    if hi - lo <= 1e-12 * lo.abs().max(hi.abs()).max(1e-300) {
        let pad = if lo == 0.0 { 1.0 } else { 0.1 * lo.abs() };
        return (lo - pad, hi + pad);
    }
    let pad = 0.05 * (hi - lo);
    (lo - pad, hi + pad)
}

impl Plot {
    /// Renders the plot on a fixed 800×500 canvas.
    pub fn to_svg(&self) -> String {
        let series: Vec<Vec<(f64, f64)>> = self
            .series
            .iter()
            .map(|s| thin(&s.points, MAX_PLOT_POINTS))
            .collect();
        // time axis spans the data exactly unless it is degenerate
        let (x0, x1) = match raw_range(series.iter().flatten().map(|p| p.0)) {
            Some((a, b)) if a < b => (a, b),
            _ => padded_range(series.iter().flatten().map(|p| p.0)),
        };
        let (y0, y1) = padded_range(series.iter().flatten().map(|p| p.1));
        let pw = WIDTH - LEFT - RIGHT;
        let ph = HEIGHT - TOP - BOTTOM;
        let sx = |x: f64| LEFT + (x - x0) / (x1 - x0) * pw;
        let sy = |y: f64| TOP + (y1 - y) / (y1 - y0) * ph;

        let mut svg = String::new();
        writeln!(
            svg,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
        )
        .unwrap();
        writeln!(svg, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#).unwrap();
        writeln!(
            svg,
            r#"<text x="{:.2}" y="24" text-anchor="middle" font-size="15">{}</text>"#,
            LEFT + pw / 2.0,
            escape(&self.title)
        )
        .unwrap();

        let xt = nice_ticks(x0, x1, 8);
        let yt = nice_ticks(y0, y1, 6);
        let xstep = if xt.len() > 1 { xt[1] - xt[0] } else { 1.0 };
        let ystep = if yt.len() > 1 { yt[1] - yt[0] } else { 1.0 };
        svg.push_str("<g stroke=\"#dddddd\" stroke-width=\"1\">\n");
        for &x in &xt {
            writeln!(
                svg,
                r#"<line x1="{0:.2}" y1="{1:.2}" x2="{0:.2}" y2="{2:.2}"/>"#,
                sx(x),
                TOP,
                TOP + ph
            )
            .unwrap();
        }
        for &y in &yt {
            writeln!(
                svg,
                r#"<line x1="{1:.2}" y1="{0:.2}" x2="{2:.2}" y2="{0:.2}"/>"#,
                sy(y),
                LEFT,
                LEFT + pw
            )
            .unwrap();
        }
        svg.push_str("</g>\n");
        writeln!(
            svg,
            r#"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
        )
        .unwrap();
        for &x in &xt {
            writeln!(
                svg,
                r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
                sx(x),
                TOP + ph + 18.0,
                tick_label(x, xstep)
            )
            .unwrap();
        }
        for &y in &yt {
            writeln!(
                svg,
                r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#,
                LEFT - 6.0,
                sy(y) + 4.0,
                tick_label(y, ystep)
            )
            .unwrap();
        }
        writeln!(
            svg,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            LEFT + pw / 2.0,
            HEIGHT - 16.0,
            escape(&self.x_label)
        )
        .unwrap();
        writeln!(
            svg,
            r#"<text x="20" y="{0:.2}" text-anchor="middle" transform="rotate(-90 20 {0:.2})">{1}</text>"#,
            TOP + ph / 2.0,
            escape(&self.y_label)
        )
        .unwrap();

        for (i, (s, pts)) in self.series.iter().zip(&series).enumerate() {
            let color = PALETTE[i % PALETTE.len()];
            let dash = if s.dashed { r#" stroke-dasharray="6 4""# } else { "" };
            let path: Vec<String> = pts
                .iter()
                .filter(|p| p.0.is_finite() && p.1.is_finite())
                .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
                .collect();
            writeln!(
                svg,
                r#"<polyline fill="none" stroke="{color}" stroke-width="1.5"{dash} points="{}"><title>{}</title></polyline>"#,
                path.join(" "),
                escape(&s.label)
            )
            .unwrap();
            let ly = TOP + 10.0 + 20.0 * i as f64;
            let lx = WIDTH - RIGHT + 15.0;
            writeln!(
                svg,
                r#"<line x1="{lx:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{color}" stroke-width="2"{dash}/>"#,
                lx + 24.0
            )
            .unwrap();
            writeln!(
                svg,
                r#"<text x="{:.2}" y="{:.2}">{}</text>"#,
                lx + 30.0,
                ly + 4.0,
                escape(&s.label)
            )
            .unwrap();
        }
        svg.push_str("</svg>\n");
        svg
    }
}

fn joint_plot(traj: &Trajectory, title: &str, y_label: &str, rates: bool) -> Plot {
    let t = traj.times();
    let series = traj
        .joint_ids
        .iter()
        .enumerate()
        .map(|(j, id)| {
            let y: Vec<f64> = traj
                .samples
                .iter()
                .map(|s| if rates { s.state.qdot[j] } else { s.state.q[j] })
                .collect();
            Series::new(id.clone(), &t, &y)
        })
        .collect();
    Plot {
        title: title.into(),
        x_label: "time (s)".into(),
        y_label: y_label.into(),
        series,
    }
}

/// One labelled series of joint angle per joint.
pub fn angle_plot(traj: &Trajectory) -> Plot {
    joint_plot(traj, "Joint angles", "angle (rad)", false)
}

/// One labelled series of joint rate per joint.
pub fn velocity_plot(traj: &Trajectory) -> Plot {
    joint_plot(traj, "Joint angular velocities", "angular velocity (rad/s)", true)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FrameBody {
    /// Tree body id (a dummy copy carries a suffix).
    pub id: String,
    /// Mechanism body it was built from.
    pub source: String,
    pub dummy: bool,
    /// World-frame outline per frame, m.
    pub frames: Vec<Vec<[f64; 3]>>,
}

/// World-frame polygons of every body at sampled times.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FrameDump {
    pub times: Vec<f64>,
    pub bodies: Vec<FrameBody>,
}

/// Samples the trajectory at roughly `frame_rate` Hz (always including the
/// first and last sample) and places every body polygon in the world frame.
pub fn frame_dump(mb: &Multibody, traj: &Trajectory, frame_rate: f64) -> FrameDump {
    let n = traj.samples.len();
    let mut picks: Vec<usize> = Vec::new();
    if n > 0 {
        let dt = if n > 1 {
            (traj.samples[n - 1].state.t - traj.samples[0].state.t) / (n - 1) as f64
        } else {
            1.0
        };
        let stride = if frame_rate > 0.0 && dt > 0.0 {
            ((1.0 / (frame_rate * dt)).round() as usize).max(1)
        } else {
            1
        };
        picks = (0..n).step_by(stride).collect();
        if *picks.last().unwrap() != n - 1 {
            picks.push(n - 1);
        }
    }
    let mut bodies: Vec<FrameBody> = mb
        .tree
        .bodies
        .iter()
        .map(|b| FrameBody {
            id: b.id.clone(),
            source: b.source.clone(),
            dummy: b.is_dummy,
            frames: Vec::with_capacity(picks.len()),
        })
        .collect();
    let polygons: Vec<Vec<Vector3<f64>>> = mb
        .tree
        .bodies
        .iter()
        .map(|b| {
            mb.spec
                .body(&b.source)
                .map(|spec| spec.polygon.iter().map(|v| Vector3::new(v[0], v[1], 0.0)).collect())
                .unwrap_or_default()
        })
        .collect();
    for &i in &picks {
        let q: &DVector<f64> = &traj.samples[i].state.q;
        let placements = mb.placements(q);
        for (b, body) in bodies.iter_mut().enumerate() {
            body.frames.push(
                polygons[b]
                    .iter()
                    .map(|v| {
                        let w = placements[b].transform_point(v);
                        [w.x, w.y, w.z]
                    })
                    .collect(),
            );
        }
    }
    FrameDump {
        times: picks.iter().map(|&i| traj.samples[i].state.t).collect(),
        bodies,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ticks_land_on_one_two_five() {
        assert_eq!(nice_ticks(0.0, 10.0, 5), vec![0.0, 2.0, 4.0, 6.0, 8.0, 10.0]);
        // 0.64 / 6 = 0.107 rounds up to a 0.2 step
        let t = nice_ticks(-0.23, 0.41, 6);
        assert_eq!(t.len(), 4);
        assert!((t[0] + 0.2).abs() < 1e-12 && (t[1] - t[0] - 0.2).abs() < 1e-12);
        let t = nice_ticks(0.0, 7.0, 7);
        assert!((t[1] - t[0] - 1.0).abs() < 1e-12);
        let t = nice_ticks(0.0, 0.0037, 8);
        assert!((t[1] - t[0] - 5e-4).abs() < 1e-15);
    }

    #[test]
    fn tick_labels_drop_negative_zero() {
        assert_eq!(tick_label(-0.0, 0.1), "0.0");
        assert_eq!(tick_label(-1e-17, 0.05), "0.00");
        assert_eq!(tick_label(0.2, 0.1), "0.2");
        assert_eq!(tick_label(20.0, 5.0), "20");
    }

    #[test]
    fn thinning_keeps_endpoints() {
        let pts: Vec<(f64, f64)> = (0..10_001).map(|i| (i as f64, 0.0)).collect();
        let t = thin(&pts, 2000);
        assert!(t.len() <= 2001);
        assert_eq!(t[0], pts[0]);
        assert_eq!(t.last(), pts.last());
        assert_eq!(thin(&pts[..5], 2000).len(), 5);
    }

    #[test]
    fn svg_escapes_labels_and_is_repeatable() {
        let plot = Plot {
            title: "a<b & c".into(),
            x_label: "t".into(),
            y_label: "y".into(),
            series: vec![Series::new("s\"1", &[0.0, 1.0, 2.0], &[0.0, 1.0, 0.5])],
        };
        let svg = plot.to_svg();
        assert!(svg.contains("a&lt;b &amp; c"));
        assert!(svg.contains("s&quot;1"));
        assert_eq!(svg, plot.to_svg());
    }

    #[test]
    fn flat_series_still_renders() {
        let plot = Plot {
            title: "flat".into(),
            x_label: "t".into(),
            y_label: "y".into(),
            series: vec![Series::new("zero", &[0.0, 1.0], &[0.0, 0.0])],
        };
        let svg = plot.to_svg();
        assert!(!svg.contains("NaN") && !svg.contains("inf"));
    }
}
