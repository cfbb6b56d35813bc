//! Deterministic SVG figures: quiver maps, pseudocolor maps with a color
//! bar, and trajectory overlays. Coordinates are printed with two decimals
//! so identical inputs give identical bytes.

use std::fmt::Write;

use iftrack_core::analysis::MeanTrajectory;
use iftrack_core::baselines::LandscapeGrid;
use iftrack_core::flow::{DivergenceMap, FlowField};
use iftrack_core::infodyn::Trajectory;
use serde::{Deserialize, Serialize};

use anyhow::{bail, Result};

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 560.0;
const LEFT: f64 = 64.0;
const TOP: f64 = 28.0;
const PLOT: f64 = 460.0;
const BAR_X: f64 = LEFT + PLOT + 24.0;
const BAR_W: f64 = 18.0;
const BAR_STEPS: usize = 64;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Palette {
    /// Blue, white, red.
    #[default]
    Rdbu,
    /// Purple, white, orange.
    Puor,
    Viridis,
    Greys,
}

impl Palette {
    fn stops(self) -> &'static [(f64, [u8; 3])] {
        match self {
            Palette::Rdbu => &[(0.0, [33, 102, 172]), (0.5, [247, 247, 247]), (1.0, [178, 24, 43])],
            Palette::Puor => &[(0.0, [84, 39, 136]), (0.5, [247, 247, 247]), (1.0, [179, 88, 6])],
            Palette::Viridis => &[
                (0.0, [68, 1, 84]),
                (0.25, [59, 82, 139]),
                (0.5, [33, 145, 140]),
                (0.75, [94, 201, 98]),
                (1.0, [253, 231, 37]),
            ],
            Palette::Greys => &[(0.0, [255, 255, 255]), (1.0, [37, 37, 37])],
        }
    }

    /// Hex color at `t` in `[0, 1]`.
    pub fn color(self, t: f64) -> String {
        let t = if t.is_finite() { t.clamp(0.0, 1.0) } else { 0.5 };
        let stops = self.stops();
        let k = stops.partition_point(|s| s.0 < t).clamp(1, stops.len() - 1);
        let ((t0, c0), (t1, c1)) = (stops[k - 1], stops[k]);
        let w = if t1 > t0 { (t - t0) / (t1 - t0) } else { 0.0 };
        let mix = |a: u8, b: u8| (a as f64 + w * (b as f64 - a as f64)).round() as u8;
        format!(
            "#{:02x}{:02x}{:02x}",
            mix(c0[0], c1[0]),
            mix(c0[1], c1[1]),
            mix(c0[2], c1[2])
        )
    }
}

/// How values map to `[0, 1]` on the palette.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Scale {
    /// `[-m, m]` with `m` the largest magnitude; zero sits at the midpoint.
    Symmetric,
    /// `[min, max]` of the defined values.
    Sequential,
}

/// Axis-aligned box in data coordinates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Frame {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl Frame {
    pub const UNIT: Frame = Frame {
        x_min: 0.0,
        x_max: 1.0,
        y_min: 0.0,
        y_max: 1.0,
    };

    fn px(&self, x: f64, y: f64) -> (f64, f64) {
        (
            LEFT + (x - self.x_min) / (self.x_max - self.x_min) * PLOT,
            TOP + (self.y_max - y) / (self.y_max - self.y_min) * PLOT,
        )
    }
}

/// Rendered document plus the number of points clipped to the frame.
#[derive(Clone, Debug, PartialEq)]
pub struct Svg {
    pub text: String,
    pub clipped: usize,
}

fn open(title: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, "<title>{}</title>", escape(title));
    let _ = writeln!(
        s,
        r##"<defs><pattern id="hatch" width="6" height="6" patternUnits="userSpaceOnUse" patternTransform="rotate(45)"><rect width="6" height="6" fill="white"/><line x1="0" y1="0" x2="0" y2="6" stroke="#bbbbbb" stroke-width="1.5"/></pattern><marker id="head" viewBox="0 0 6 6" refX="5" refY="3" markerWidth="5" markerHeight="5" orient="auto"><path d="M0 0 L6 3 L0 6 z" fill="black"/></marker></defs>"##
    );
    let _ = writeln!(s, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    s
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

fn tick(v: f64) -> String {
    if v == 0.0 {
        "0".into()
    } else if v.abs() >= 1e-2 && v.abs() < 1e4 {
        format!("{v:.3}")
    } else {
        format!("{v:.2e}")
    }
}

fn axes(s: &mut String, frame: &Frame, x_label: &str, y_label: &str) {
    let _ = writeln!(
        s,
        r#"<rect class="frame" x="{LEFT:.2}" y="{TOP:.2}" width="{PLOT:.2}" height="{PLOT:.2}" fill="none" stroke="black"/>"#
    );
    for k in 0..=4 {
        let f = k as f64 / 4.0;
        let x = frame.x_min + f * (frame.x_max - frame.x_min);
        let y = frame.y_min + f * (frame.y_max - frame.y_min);
        let (px, _) = frame.px(x, frame.y_min);
        let (_, py) = frame.px(frame.x_min, y);
        let base = TOP + PLOT;
        let _ = writeln!(
            s,
            r#"<line x1="{px:.2}" y1="{base:.2}" x2="{px:.2}" y2="{:.2}" stroke="black"/><text x="{px:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            base + 5.0,
            base + 18.0,
            tick(x)
        );
        let _ = writeln!(
            s,
            r#"<line x1="{:.2}" y1="{py:.2}" x2="{LEFT:.2}" y2="{py:.2}" stroke="black"/><text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#,
            LEFT - 5.0,
            LEFT - 8.0,
            py + 4.0,
            tick(y)
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle" font-size="13">{}</text>"#,
        LEFT + PLOT / 2.0,
        TOP + PLOT + 40.0,
        escape(x_label)
    );
    let _ = writeln!(
        s,
        r#"<text x="18" y="{:.2}" text-anchor="middle" font-size="13" transform="rotate(-90 18 {:.2})">{}</text>"#,
        TOP + PLOT / 2.0,
        TOP + PLOT / 2.0,
        escape(y_label)
    );
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct QuiverStyle {
    /// Speed drawn at the full arrow length (0.9 cell). Faster cells are
    /// capped; `None` uses the largest cell speed.
    pub speed_cap: Option<f64>,
}

/// One arrow per non-empty cell at the cell center; zero-velocity cells get
/// a dot.
pub fn render_quiver(field: &FlowField, style: QuiverStyle, title: &str) -> Result<Svg> {
    let g = field.grid;
    let cells: Vec<(usize, usize)> = (0..g.ny)
        .flat_map(|j| (0..g.nx).map(move |i| (i, j)))
        .filter(|&(i, j)| field.cell(i, j).count > 0)
        .collect();
    if cells.is_empty() {
        bail!("flow field has no non-empty cell");
    }
    let speed = |i, j| {
        let c = field.cell(i, j);
        c.v1_mean.hypot(c.v2_mean)
    };
    let cap = style
        .speed_cap
        .unwrap_or_else(|| cells.iter().map(|&(i, j)| speed(i, j)).fold(0.0, f64::max));
    let frame = Frame::UNIT;
    let cell_px = (PLOT / g.nx as f64).min(PLOT / g.ny as f64);
    let mut s = open(title);
    axes(&mut s, &frame, "uncertainty u", "effort e");
    for &(i, j) in &cells {
        let c = field.cell(i, j);
        let (cx, cy) = frame.px(g.center(i, j).0, g.center(i, j).1);
        let v = speed(i, j);
        if !(v > 0.0) || !(cap > 0.0) {
            let _ = writeln!(
                s,
                r#"<circle class="dot" cx="{cx:.2}" cy="{cy:.2}" r="1.5" fill="black"/>"#
            );
            continue;
        }
        let len = 0.9 * cell_px * (v / cap).min(1.0);
        // screen y grows downwards
        let (dx, dy) = (c.v1_mean / v * len, -c.v2_mean / v * len);
        let _ = writeln!(
            s,
            r#"<path class="arrow" d="M{:.2} {:.2} L{:.2} {:.2}" stroke="black" stroke-width="1" marker-end="url(#head)"/>"#,
            cx - dx / 2.0,
            cy - dy / 2.0,
            cx + dx / 2.0,
            cy + dy / 2.0
        );
    }
    s.push_str("</svg>\n");
    Ok(Svg { text: s, clipped: 0 })
}

/// Values on a regular grid over `frame`, row-major with `j` along y.
#[derive(Clone, Debug, PartialEq)]
pub struct HeatmapData {
    pub frame: Frame,
    pub nx: usize,
    pub ny: usize,
    pub values: Vec<Option<f64>>,
    pub scale: Scale,
}

impl HeatmapData {
    pub fn divergence(map: &DivergenceMap) -> Self {
        HeatmapData {
            frame: Frame::UNIT,
            nx: map.grid.nx,
            ny: map.grid.ny,
            values: map.values.clone(),
            scale: Scale::Symmetric,
        }
    }

    pub fn landscape(grid: &LandscapeGrid) -> Self {
        HeatmapData {
            frame: Frame {
                x_min: grid.x_min,
                x_max: grid.x_max,
                y_min: grid.y_min,
                y_max: grid.y_max,
            },
            nx: grid.nx,
            ny: grid.ny,
            values: grid.density.iter().map(|&d| Some(d)).collect(),
            scale: Scale::Sequential,
        }
    }
}

/// One rect per cell: defined cells filled from the palette, undefined
/// cells hatched, with a color bar on the right. `overlay` polylines are
/// drawn on top in data coordinates.
pub fn render_heatmap(
    data: &HeatmapData,
    palette: Palette,
    labels: (&str, &str),
    overlay: &[Vec<[f64; 2]>],
    title: &str,
) -> Result<Svg> {
    let defined: Vec<f64> = data.values.iter().filter_map(|v| *v).collect();
    if defined.is_empty() {
        bail!("map has no defined cell");
    }
    if data.values.len() != data.nx * data.ny {
        bail!(
            "map has {} values for a {}x{} grid",
            data.values.len(),
            data.nx,
            data.ny
        );
    }
    let (lo, hi) = match data.scale {
        Scale::Symmetric => {
            let m = defined.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            (-m, m)
        }
        Scale::Sequential => (
            defined.iter().copied().fold(f64::INFINITY, f64::min),
            defined.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        ),
    };
    let to_unit = |v: f64| if hi > lo { (v - lo) / (hi - lo) } else { 0.5 };
    let mut s = open(title);
    let (w, h) = (PLOT / data.nx as f64, PLOT / data.ny as f64);
    for j in 0..data.ny {
        for i in 0..data.nx {
            let x = LEFT + i as f64 * w;
            let y = TOP + PLOT - (j + 1) as f64 * h;
            match data.values[j * data.nx + i] {
                Some(v) => {
                    let _ = writeln!(
                        s,
                        r#"<rect class="cell" x="{x:.2}" y="{y:.2}" width="{w:.2}" height="{h:.2}" fill="{}"/>"#,
                        palette.color(to_unit(v))
                    );
                }
                None => {
                    let _ = writeln!(
                        s,
                        r#"<rect class="undefined" x="{x:.2}" y="{y:.2}" width="{w:.2}" height="{h:.2}" fill="url(#hatch)"/>"#
                    );
                }
            }
        }
    }
    axes(&mut s, &data.frame, labels.0, labels.1);
    let mut clipped = 0;
    for line in overlay {
        let pts = clip_points(line, &data.frame, &mut clipped);
        if pts.len() >= 2 {
            let _ = writeln!(
                s,
                r#"<polyline class="overlay" points="{}" fill="none" stroke="black" stroke-opacity="0.35" stroke-width="0.8"/>"#,
                pts.iter()
                    .map(|&(x, y)| {
                        let (px, py) = data.frame.px(x, y);
                        format!("{px:.2},{py:.2}")
                    })
                    .collect::<Vec<_>>()
                    .join(" ")
            );
        }
    }
    color_bar(&mut s, palette, lo, hi);
    s.push_str("</svg>\n");
    Ok(Svg { text: s, clipped })
}

fn color_bar(s: &mut String, palette: Palette, lo: f64, hi: f64) {
    let step = PLOT / BAR_STEPS as f64;
    for k in 0..BAR_STEPS {
        let t = (k as f64 + 0.5) / BAR_STEPS as f64;
        let y = TOP + PLOT - (k + 1) as f64 * step;
        let _ = writeln!(
            s,
            r#"<rect class="bar" x="{BAR_X:.2}" y="{y:.2}" width="{BAR_W:.2}" height="{:.2}" fill="{}"/>"#,
            step + 0.05,
            palette.color(t)
        );
    }
    let _ = writeln!(
        s,
        r#"<rect x="{BAR_X:.2}" y="{TOP:.2}" width="{BAR_W:.2}" height="{PLOT:.2}" fill="none" stroke="black"/>"#
    );
    for k in 0..=4 {
        let f = k as f64 / 4.0;
        let v = if hi > lo { lo + f * (hi - lo) } else { lo };
        let y = TOP + PLOT - f * PLOT;
        let _ = writeln!(
            s,
            r#"<line x1="{:.2}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="black"/><text class="tick" x="{:.2}" y="{:.2}">{}</text>"#,
            BAR_X + BAR_W,
            BAR_X + BAR_W + 4.0,
            BAR_X + BAR_W + 6.0,
            y + 4.0,
            tick(v)
        );
    }
}

fn clip_points(points: &[[f64; 2]], frame: &Frame, clipped: &mut usize) -> Vec<(f64, f64)> {
    points
        .iter()
        .map(|p| {
            let x = p[0].clamp(frame.x_min, frame.x_max);
            let y = p[1].clamp(frame.y_min, frame.y_max);
            if x != p[0] || y != p[1] {
                *clipped += 1;
            }
            (x, y)
        })
        .collect()
}

/// Individual trajectories in the unit square, one line per segment with
/// opacity rising along `tau`.
pub fn render_trajectories(trajectories: &[Trajectory], title: &str) -> Result<Svg> {
    if trajectories.is_empty() {
        bail!("no trajectories to draw");
    }
    let frame = Frame::UNIT;
    let mut s = open(title);
    axes(&mut s, &frame, "uncertainty u", "effort e");
    let mut clipped = 0;
    for t in trajectories {
        let pts: Vec<[f64; 2]> = t.points.iter().map(|p| [p.u, p.e]).collect();
        let pts = clip_points(&pts, &frame, &mut clipped);
        for (k, w) in pts.windows(2).enumerate() {
            let tau = 0.5 * (t.points[k].tau + t.points[k + 1].tau);
            let (x1, y1) = frame.px(w[0].0, w[0].1);
            let (x2, y2) = frame.px(w[1].0, w[1].1);
            let _ = writeln!(
                s,
                r#"<line class="segment" x1="{x1:.2}" y1="{y1:.2}" x2="{x2:.2}" y2="{y2:.2}" stroke="{}" stroke-opacity="{:.3}" stroke-width="0.8"/>"#,
                Palette::Viridis.color(0.15),
                0.15 + 0.85 * tau.clamp(0.0, 1.0)
            );
        }
    }
    s.push_str("</svg>\n");
    Ok(Svg { text: s, clipped })
}

const SERIES: [&str; 6] = ["#1b9e77", "#d95f02", "#7570b3", "#e7298a", "#66a61e", "#e6ab02"];

/// Mean trajectories with bootstrap ribbons drawn behind the mean line. The
/// ribbon half-width at each point is the support of the `(u, e)` interval
/// box along the curve normal.
pub fn render_mean_trajectories(cohorts: &[(String, MeanTrajectory)], title: &str) -> Result<Svg> {
    if cohorts.is_empty() || cohorts.iter().any(|(_, m)| m.tau.is_empty()) {
        bail!("no mean trajectories to draw");
    }
    let frame = Frame::UNIT;
    let mut s = open(title);
    axes(&mut s, &frame, "uncertainty u", "effort e");
    let mut clipped = 0;
    for (k, (name, m)) in cohorts.iter().enumerate() {
        let color = SERIES[k % SERIES.len()];
        let n = m.tau.len();
        let mut upper = Vec::with_capacity(n);
        let mut lower = Vec::with_capacity(n);
        for q in 0..n {
            let (a, b) = (q.saturating_sub(1), (q + 1).min(n - 1));
            let (tx, ty) = (m.u_mean[b] - m.u_mean[a], m.e_mean[b] - m.e_mean[a]);
            let norm = tx.hypot(ty);
            let (nx, ny) = if norm > 0.0 {
                (-ty / norm, tx / norm)
            } else {
                (0.0, 1.0)
            };
            let half = 0.5 * (nx.abs() * (m.u_hi[q] - m.u_lo[q]) + ny.abs() * (m.e_hi[q] - m.e_lo[q]));
            upper.push([m.u_mean[q] + half * nx, m.e_mean[q] + half * ny]);
            lower.push([m.u_mean[q] - half * nx, m.e_mean[q] - half * ny]);
        }
        lower.reverse();
        upper.extend(lower);
        let ribbon = clip_points(&upper, &frame, &mut clipped);
        let mean: Vec<[f64; 2]> = (0..n).map(|q| [m.u_mean[q], m.e_mean[q]]).collect();
        let mean = clip_points(&mean, &frame, &mut clipped);
        let fmt = |pts: &[(f64, f64)]| {
            pts.iter()
                .map(|&(x, y)| {
                    let (px, py) = frame.px(x, y);
                    format!("{px:.2},{py:.2}")
                })
                .collect::<Vec<_>>()
                .join(" ")
        };
        let _ = writeln!(
            s,
            r#"<polygon class="ribbon" points="{}" fill="{color}" fill-opacity="0.2" stroke="none"/>"#,
            fmt(&ribbon)
        );
        let _ = writeln!(
            s,
            r#"<polyline class="mean" points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
            fmt(&mean)
        );
        let ly = TOP + 14.0 + 16.0 * k as f64;
        let _ = writeln!(
            s,
            r#"<line x1="{:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{color}" stroke-width="3"/><text x="{:.2}" y="{:.2}">{}</text>"#,
            BAR_X,
            BAR_X + 16.0,
            BAR_X + 20.0,
            ly + 4.0,
            escape(name)
        );
    }
    s.push_str("</svg>\n");
    Ok(Svg { text: s, clipped })
}
