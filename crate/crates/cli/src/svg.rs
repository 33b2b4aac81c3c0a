//! Static SVG strip of a run: one panel per selected iteration showing ground
//! truth, the agent's proposal and the current detections, with a row of
//! location heat tiles per category underneath.

use std::fmt::Write as _;

use situate_core::engine::{Action, Run, TraceEvent};
use situate_core::geometry::{ImageDims, PixelBox};

const PANEL_W: f64 = 240.0;
const GAP: f64 = 16.0;
const TITLE_H: f64 = 30.0;
const GRID_X: usize = 24;
const GRID_Y: usize = 18;
const PALETTE: [&str; 6] = ["#d62728", "#1f77b4", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

/// Workspace state right after one agent ran.
#[derive(Debug, Clone)]
pub struct Snapshot {
    pub event: TraceEvent,
    /// `(category index, box, weak)`.
    pub detections: Vec<(usize, PixelBox, bool)>,
    /// Per category: mean and covariance of the conditioned `(cx, cy)`
    /// marginal, or `None` while location is still uniform.
    pub location: Vec<Option<([f64; 2], [f64; 3])>>,
}

impl Snapshot {
    pub fn capture(run: &Run<'_>, event: &TraceEvent) -> Self {
        let ws = run.workspace();
        let detections = ws
            .detections()
            .iter()
            .enumerate()
            .filter_map(|(c, d)| d.as_ref().map(|d| (c, d.proposal.bbox, d.weak)))
            .collect();
        let location = (0..ws.detections().len())
            .map(|c| {
                ws.conditioned(c).map(|g| {
                    let (m, s) = (g.mean(), g.cov());
                    ([m[0], m[1]], [s[(0, 0)], s[(0, 1)], s[(1, 1)]])
                })
            })
            .collect();
        Self {
            event: event.clone(),
            detections,
            location,
        }
    }
}

/// Up to `count` evenly spaced iterations out of `total`, always including the last.
pub fn select_iterations(total: usize, count: usize) -> Vec<usize> {
    if total == 0 || count == 0 {
        return Vec::new();
    }
    let mut out: Vec<usize> = (1..=count.min(total)).map(|i| (i * total).div_ceil(count.min(total)) - 1).collect();
    out.dedup();
    out
}

fn density_2d(mean: [f64; 2], cov: [f64; 3], x: f64, y: f64) -> f64 {
    let [a, b, d] = cov;
    let det = a * d - b * b;
    if !(det > 0.0) {
        return 0.0;
    }
    let (dx, dy) = (x - mean[0], y - mean[1]);
    let q = (d * dx * dx - 2.0 * b * dx * dy + a * dy * dy) / det;
    (-0.5 * q).exp()
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn rect(out: &mut String, b: &PixelBox, scale: f64, ox: f64, oy: f64, style: &str) {
    let _ = writeln!(
        out,
        r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" {style}/>"#,
        ox + b.x * scale,
        oy + b.y * scale,
        b.w * scale,
        b.h * scale
    );
}

fn action_label(a: Action) -> &'static str {
    match a {
        Action::Discarded => "discarded",
        Action::MarkedForRefinement => "marked for refinement",
        Action::Detected => "detected",
        Action::Replaced => "replaced",
        Action::KeptIncumbent => "kept incumbent",
        Action::FeatureUnavailable => "no features",
    }
}

pub fn render(
    image_id: &str,
    dims: ImageDims,
    categories: &[String],
    truth: &[PixelBox],
    snapshots: &[Snapshot],
) -> String {
    let scale = PANEL_W / dims.w();
    let panel_h = dims.h() * scale;
    let k = categories.len().max(1);
    let tile_w = (PANEL_W - GAP * (k as f64 - 1.0) / 2.0) / k as f64;
    let tile_h = tile_w * dims.h() / dims.w();
    let legend_h = 20.0;
    let width = GAP + snapshots.len().max(1) as f64 * (PANEL_W + GAP);
    let height = legend_h + TITLE_H + panel_h + GAP / 2.0 + tile_h + GAP;

    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{height:.0}" viewBox="0 0 {width:.0} {height:.0}" font-family="sans-serif" font-size="10">"#
    );
    let _ = writeln!(out, r#"<title>{}</title>"#, escape(image_id));
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    for (c, name) in categories.iter().enumerate() {
        let x = GAP + c as f64 * 110.0;
        let _ = writeln!(
            out,
            r#"<rect x="{x:.0}" y="6" width="10" height="10" fill="{}"/><text x="{:.0}" y="15">{}</text>"#,
            PALETTE[c % PALETTE.len()],
            x + 14.0,
            escape(name)
        );
    }

    for (i, s) in snapshots.iter().enumerate() {
        let ox = GAP + i as f64 * (PANEL_W + GAP);
        let oy = legend_h + TITLE_H;
        let e = &s.event;
        let _ = writeln!(out, r#"<g id="iteration-{}">"#, e.iteration);
        let _ = writeln!(
            out,
            r#"<text x="{ox:.1}" y="{:.1}">iteration {}: {} / {}</text>"#,
            legend_h + 10.0,
            e.iteration,
            escape(&format!("{:?}", e.agent).to_lowercase()),
            escape(&e.category)
        );
        let _ = writeln!(
            out,
            r#"<text x="{ox:.1}" y="{:.1}">{}, total {:.2}, score {:.3}</text>"#,
            legend_h + 22.0,
            action_label(e.action),
            e.total,
            e.score
        );
        let _ = writeln!(
            out,
            r##"<rect x="{ox:.2}" y="{oy:.2}" width="{PANEL_W:.2}" height="{panel_h:.2}" fill="#f4f4f4" stroke="#444"/>"##
        );
        for b in truth {
            rect(&mut out, b, scale, ox, oy, r##"fill="none" stroke="#999" stroke-dasharray="2 2""##);
        }
        let c_ev = categories.iter().position(|c| c == &e.category).unwrap_or(0);
        rect(
            &mut out,
            &e.bbox,
            scale,
            ox,
            oy,
            &format!(r#"fill="none" stroke="{}" stroke-width="0.8" stroke-opacity="0.6""#, PALETTE[c_ev % PALETTE.len()]),
        );
        for (c, b, weak) in &s.detections {
            let dash = if *weak { r#" stroke-dasharray="5 3""# } else { "" };
            rect(
                &mut out,
                b,
                scale,
                ox,
                oy,
                &format!(r#"fill="none" stroke="{}" stroke-width="2"{dash}"#, PALETTE[c % PALETTE.len()]),
            );
        }

        let ty = oy + panel_h + GAP / 2.0;
        for (c, loc) in s.location.iter().enumerate() {
            let tx = ox + c as f64 * (tile_w + GAP / 2.0);
            let color = PALETTE[c % PALETTE.len()];
            let (cw, ch) = (tile_w / GRID_X as f64, tile_h / GRID_Y as f64);
            let cells: Vec<f64> = (0..GRID_Y)
                .flat_map(|gy| (0..GRID_X).map(move |gx| (gx, gy)))
                .map(|(gx, gy)| match loc {
                    None => 1.0,
                    Some((m, cov)) => density_2d(
                        *m,
                        *cov,
                        (gx as f64 + 0.5) / GRID_X as f64,
                        (gy as f64 + 0.5) / GRID_Y as f64,
                    ),
                })
                .collect();
            let peak = cells.iter().copied().fold(0.0, f64::max);
            for (n, v) in cells.iter().enumerate() {
                let o = match loc {
                    None => 0.2,
                    Some(_) if peak > 0.0 => 0.85 * v / peak,
                    Some(_) => 0.0,
                };
                if o < 0.01 {
                    continue;
                }
                let _ = writeln!(
                    out,
                    r#"<rect x="{:.2}" y="{:.2}" width="{cw:.2}" height="{ch:.2}" fill="{color}" fill-opacity="{o:.3}"/>"#,
                    tx + (n % GRID_X) as f64 * cw,
                    ty + (n / GRID_X) as f64 * ch
                );
            }
            let _ = writeln!(
                out,
                r##"<rect x="{tx:.2}" y="{ty:.2}" width="{tile_w:.2}" height="{tile_h:.2}" fill="none" stroke="#444" stroke-width="0.5"/>"##
            );
        }
        let _ = writeln!(out, "</g>");
    }
    out.push_str("</svg>\n");
    out
}
