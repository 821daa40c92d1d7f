//! SVG heatmaps of normalized cell utility, convergence plots and history tables.

use std::fmt::Write as _;

use tagplan_core::ga::{Chromosome, HistoryRecord};
use tagplan_core::scene::{Polygon, Vec2};
use tagplan_core::valuation::Valuation;

/// Utility 0 maps to red, 0.5 to yellow and 1 to green.
pub const RAMP: [(f64, [u8; 3]); 3] = [
    (0.0, [0xd0, 0x00, 0x00]),
    (0.5, [0xe0, 0xe0, 0x00]),
    (1.0, [0x00, 0xa0, 0x00]),
];

pub const OBSTACLE_FILL: &str = "#4a4a4a";
pub const NO_FLY_FILL: &str = "#9a9a9a";
pub const ROI_STROKE: &str = "#1f4e9a";
pub const TAG_STROKE: &str = "#ff8c00";

/// Pixels per meter.
const SCALE: f64 = 40.0;
const MARGIN: f64 = 0.5;

pub fn ramp_color(value: f64) -> String {
    let v = if value.is_nan() { 0.0 } else { value.clamp(0.0, 1.0) };
    let (lo, hi) = if v <= RAMP[1].0 {
        (RAMP[0], RAMP[1])
    } else {
        (RAMP[1], RAMP[2])
    };
    let t = (v - lo.0) / (hi.0 - lo.0);
    let mix = |a: u8, b: u8| (a as f64 + (b as f64 - a as f64) * t).round() as u8;
    format!(
        "#{:02x}{:02x}{:02x}",
        mix(lo.1[0], hi.1[0]),
        mix(lo.1[1], hi.1[1]),
        mix(lo.1[2], hi.1[2])
    )
}

struct Frame {
    min: Vec2,
    max: Vec2,
}

impl Frame {
    fn width(&self) -> f64 {
        (self.max.x - self.min.x) * SCALE
    }

    fn height(&self) -> f64 {
        (self.max.y - self.min.y) * SCALE
    }

    fn x(&self, x: f64) -> f64 {
        (x - self.min.x) * SCALE
    }

    fn y(&self, y: f64) -> f64 {
        (self.max.y - y) * SCALE
    }

    fn points(&self, poly: &Polygon) -> String {
        poly.vertices()
            .iter()
            .map(|v| format!("{:.2},{:.2}", self.x(v.x), self.y(v.y)))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

/// One phase: heatmap cells, ROI outlines, no-fly zones, obstacles and tags.
pub fn phase_svg(valuation: &Valuation<'_>, c: &Chromosome, phase: usize, title: &str) -> String {
    let problem = valuation.problem;
    let model = &problem.phases[phase];
    let scene = &model.scene;
    let mut min = Vec2::new(f64::INFINITY, f64::INFINITY);
    let mut max = Vec2::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
    let polys = scene
        .obstacles
        .iter()
        .chain(scene.no_fly.iter())
        .chain(scene.rois.iter().map(|r| &r.polygon));
    for p in polys {
        let (lo, hi) = p.bounds();
        min = min.inf(&lo);
        max = max.sup(&hi);
    }
    let frame = Frame {
        min: min - Vec2::new(MARGIN, MARGIN),
        max: max + Vec2::new(MARGIN, MARGIN),
    };
    let (w, h) = (frame.width(), frame.height());
    let mut s = String::new();
    let _ = writeln!(s, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{w:.0}" height="{h:.0}" viewBox="0 0 {w:.2} {h:.2}">"#
    );
    let _ = writeln!(s, "<title>{}</title>", escape(title));
    let _ = writeln!(s, r##"<rect x="0" y="0" width="{w:.2}" height="{h:.2}" fill="#ffffff"/>"##);

    let _ = writeln!(s, r#"<g id="heatmap" stroke="none">"#);
    let values = valuation.cell_utilities(c, phase);
    for (i, (cell, v)) in model.cells.iter().zip(&values).enumerate() {
        let half = cell.size / 2.0;
        let _ = writeln!(
            s,
            r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="{}" data-cell="{i}" data-value="{v:.6}"/>"#,
            frame.x(cell.center.x - half),
            frame.y(cell.center.y + half),
            cell.size * SCALE,
            cell.size * SCALE,
            ramp_color(*v),
        );
    }
    let _ = writeln!(s, "</g>");

    let _ = writeln!(s, r#"<g id="rois" fill="none" stroke="{ROI_STROKE}" stroke-width="2" stroke-dasharray="6 4">"#);
    for roi in &scene.rois {
        let _ = writeln!(s, r#"<polygon points="{}" data-importance="{}"/>"#, frame.points(&roi.polygon), roi.importance);
    }
    let _ = writeln!(s, "</g>");
    let _ = writeln!(s, r#"<g id="no-fly" fill="{NO_FLY_FILL}" fill-opacity="0.6" stroke="none">"#);
    for p in &scene.no_fly {
        let _ = writeln!(s, r#"<polygon points="{}"/>"#, frame.points(p));
    }
    let _ = writeln!(s, "</g>");
    let _ = writeln!(s, r#"<g id="obstacles" fill="{OBSTACLE_FILL}" stroke="none">"#);
    for p in &scene.obstacles {
        let _ = writeln!(s, r#"<polygon points="{}"/>"#, frame.points(p));
    }
    let _ = writeln!(s, "</g>");

    let _ = writeln!(s, r#"<g id="tags" stroke="{TAG_STROKE}" fill="{TAG_STROKE}" stroke-width="3">"#);
    for (slot, size) in valuation.active_tags(c, phase) {
        let sl = &problem.slots[slot];
        let size_m = problem.params.tag_sizes[size];
        let t = Vec2::new(-sl.normal.y, sl.normal.x) * (size_m / 2.0);
        let (a, b) = (sl.anchor + t, sl.anchor - t);
        let tip = sl.anchor + sl.normal * 0.35;
        let head = sl.anchor + sl.normal * 0.22;
        let wing = Vec2::new(-sl.normal.y, sl.normal.x) * 0.08;
        let _ = writeln!(
            s,
            r#"<g data-slot="{slot}" data-size="{size_m}" data-height="{}"><line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}"/><line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke-width="1.5"/><polygon points="{:.2},{:.2} {:.2},{:.2} {:.2},{:.2}" stroke="none"/></g>"#,
            sl.height,
            frame.x(a.x),
            frame.y(a.y),
            frame.x(b.x),
            frame.y(b.y),
            frame.x(sl.anchor.x),
            frame.y(sl.anchor.y),
            frame.x(head.x),
            frame.y(head.y),
            frame.x(tip.x),
            frame.y(tip.y),
            frame.x(head.x + wing.x),
            frame.y(head.y + wing.y),
            frame.x(head.x - wing.x),
            frame.y(head.y - wing.y),
        );
    }
    let _ = writeln!(s, "</g>");
    let _ = writeln!(s, "</svg>");
    s
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Best and mean score per generation.
pub fn convergence_svg(history: &[HistoryRecord]) -> String {
    let (w, h, pad) = (640.0, 360.0, 40.0);
    let mut s = String::new();
    let _ = writeln!(s, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#
    );
    let _ = writeln!(s, "<title>GA convergence</title>");
    let _ = writeln!(s, r##"<rect x="0" y="0" width="{w}" height="{h}" fill="#ffffff"/>"##);
    let lo = history
        .iter()
        .map(|r| r.mean.min(r.best))
        .fold(f64::INFINITY, f64::min);
    let hi = history
        .iter()
        .map(|r| r.best.max(r.mean))
        .fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    let n = history.len().max(2) - 1;
    let px = |i: usize| pad + (w - 2.0 * pad) * i as f64 / n as f64;
    let py = |v: f64| h - pad - (h - 2.0 * pad) * (v - lo) / span;
    let _ = writeln!(
        s,
        r##"<g stroke="#000000" stroke-width="1"><line x1="{pad}" y1="{}" x2="{}" y2="{}"/><line x1="{pad}" y1="{pad}" x2="{pad}" y2="{}"/></g>"##,
        h - pad,
        w - pad,
        h - pad,
        h - pad
    );
    for (series, color, pick) in [
        ("mean", "#7a7a7a", (|r: &HistoryRecord| r.mean) as fn(&HistoryRecord) -> f64),
        ("best", "#00a000", |r: &HistoryRecord| r.best),
    ] {
        let pts: Vec<String> = history
            .iter()
            .enumerate()
            .map(|(i, r)| format!("{:.2},{:.2}", px(i), py(pick(r))))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline id="{series}" fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#,
            pts.join(" ")
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{pad}" y="20" font-family="sans-serif" font-size="12">score {lo:.4} .. {hi:.4} over {} generations</text>"#,
        history.len()
    );
    let _ = writeln!(s, "</svg>");
    s
}

pub fn history_csv(history: &[HistoryRecord]) -> String {
    let mut s = String::from("iteration,best,mean,evaluations,cache_hit_rate\n");
    for r in history {
        let _ = writeln!(
            s,
            "{},{},{},{},{}",
            r.iteration, r.best, r.mean, r.evaluations, r.cache_hit_rate
        );
    }
    s
}

/// `(cell index, value)` of every heatmap cell in an SVG produced by [`phase_svg`].
pub fn heatmap_values(svg: &str) -> Vec<(usize, f64)> {
    let attr = |line: &str, name: &str| -> Option<String> {
        let key = format!("{name}=\"");
        let start = line.find(&key)? + key.len();
        let end = line[start..].find('"')? + start;
        Some(line[start..end].to_string())
    };
    svg.lines()
        .filter_map(|l| {
            let cell = attr(l, "data-cell")?.parse().ok()?;
            let value = attr(l, "data-value")?.parse().ok()?;
            Some((cell, value))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ramp_endpoints() {
        assert_eq!(ramp_color(1.0), "#00a000");
        assert_eq!(ramp_color(0.0), "#d00000");
        assert_eq!(ramp_color(0.5), "#e0e000");
        assert_eq!(ramp_color(0.25), "#d87000");
    }

    #[test]
    fn history_table_layout() {
        let h = vec![HistoryRecord {
            iteration: 0,
            best: 1.5,
            mean: 0.25,
            evaluations: 50,
            cache_hit_rate: 0.5,
        }];
        assert_eq!(
            history_csv(&h),
            "iteration,best,mean,evaluations,cache_hit_rate\n0,1.5,0.25,50,0.5\n"
        );
        let svg = convergence_svg(&h);
        assert!(svg.contains("viewBox"));
        assert!(svg.trim_end().ends_with("</svg>"));
    }
}
