//! Minimal standalone SVG renderings of the analysis artifacts. These are
//! write-only presentation files; the CSVs carry the testable numbers.

use super::{Ellipse, LabelDistribution, RankCurve};
use std::fmt::Write;

const W: f64 = 640.0;
const H: f64 = 480.0;
const MARGIN: f64 = 56.0;

struct Frame {
    x_min: f64,
    x_max: f64,
    y_min: f64,
    y_max: f64,
}

impl Frame {
    fn of(points: impl Iterator<Item = (f64, f64)>) -> Self {
        let mut f = Frame {
            x_min: f64::INFINITY,
            x_max: f64::NEG_INFINITY,
            y_min: f64::INFINITY,
            y_max: f64::NEG_INFINITY,
        };
        for (x, y) in points {
            f.x_min = f.x_min.min(x);
            f.x_max = f.x_max.max(x);
            f.y_min = f.y_min.min(y);
            f.y_max = f.y_max.max(y);
        }
        let pad = |lo: &mut f64, hi: &mut f64| {
            let span = (*hi - *lo).max(1e-12);
            *lo -= 0.05 * span;
            *hi += 0.05 * span;
        };
        pad(&mut f.x_min, &mut f.x_max);
        pad(&mut f.y_min, &mut f.y_max);
        f
    }

    fn sx(&self, x: f64) -> f64 {
        MARGIN + (x - self.x_min) / (self.x_max - self.x_min) * (W - 2.0 * MARGIN)
    }

    fn sy(&self, y: f64) -> f64 {
        H - MARGIN - (y - self.y_min) / (self.y_max - self.y_min) * (H - 2.0 * MARGIN)
    }
}

fn document(body: &str, title: &str) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\">\n\
         <rect width=\"{W}\" height=\"{H}\" fill=\"white\"/>\n\
         <text x=\"{}\" y=\"24\" font-family=\"sans-serif\" font-size=\"15\" text-anchor=\"middle\">{title}</text>\n\
         {body}</svg>\n",
        W / 2.0
    )
}

pub fn svg_rank_curve(curve: &RankCurve, title: &str) -> String {
    let frame = Frame::of(
        curve
            .ranks
            .iter()
            .zip(curve.mean_distance.iter())
            .map(|(&r, &d)| (r as f64, d)),
    );
    let mut body = String::new();
    let _ = writeln!(
        body,
        "<rect x=\"{MARGIN}\" y=\"{MARGIN}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"#888\"/>",
        W - 2.0 * MARGIN,
        H - 2.0 * MARGIN
    );
    let pts: Vec<String> = curve
        .ranks
        .iter()
        .zip(curve.mean_distance.iter())
        .map(|(&r, &d)| format!("{:.2},{:.2}", frame.sx(r as f64), frame.sy(d)))
        .collect();
    let _ = writeln!(
        body,
        "<polyline points=\"{}\" fill=\"none\" stroke=\"#1f77b4\" stroke-width=\"2\"/>",
        pts.join(" ")
    );
    for (r, d) in curve.ranks.iter().zip(curve.mean_distance.iter()) {
        let _ = writeln!(
            body,
            "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"2.5\" fill=\"#1f77b4\"/>",
            frame.sx(*r as f64),
            frame.sy(*d)
        );
    }
    let _ = writeln!(
        body,
        "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"middle\">similarity rank</text>",
        W / 2.0,
        H - 18.0
    );
    let _ = writeln!(
        body,
        "<text x=\"18\" y=\"{}\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"middle\" transform=\"rotate(-90 18 {})\">mean normalized distance</text>",
        H / 2.0,
        H / 2.0
    );
    document(&body, title)
}

fn ellipse_svg(e: &Ellipse, frame: &Frame, stroke: &str, dashed: bool) -> String {
    let rx = (frame.sx(e.center[0] + e.radii[0]) - frame.sx(e.center[0] - e.radii[0])).abs() / 2.0;
    let ry = (frame.sy(e.center[1] + e.radii[1]) - frame.sy(e.center[1] - e.radii[1])).abs() / 2.0;
    format!(
        "<ellipse cx=\"{:.2}\" cy=\"{:.2}\" rx=\"{:.2}\" ry=\"{:.2}\" fill=\"none\" stroke=\"{stroke}\" stroke-width=\"1.5\"{}/>\n",
        frame.sx(e.center[0]),
        frame.sy(e.center[1]),
        rx.max(1.0),
        ry.max(1.0),
        if dashed { " stroke-dasharray=\"6 4\"" } else { "" }
    )
}

pub fn svg_label_distribution(ld: &LabelDistribution, title: &str) -> String {
    let frame = Frame::of(
        ld.train_points
            .iter()
            .chain(ld.test_points.iter())
            .map(|p| (p[0], p[1])),
    );
    let mut body = String::new();
    for (points, color) in [(&ld.train_points, "#2ca02c"), (&ld.test_points, "#d62728")] {
        for p in points.iter() {
            let _ = writeln!(
                body,
                "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"2.5\" fill=\"{color}\" fill-opacity=\"0.6\"/>",
                frame.sx(p[0]),
                frame.sy(p[1])
            );
        }
    }
    body.push_str(&ellipse_svg(&ld.train_std, &frame, "#2ca02c", true));
    body.push_str(&ellipse_svg(&ld.train_range, &frame, "#2ca02c", false));
    body.push_str(&ellipse_svg(&ld.test_std, &frame, "#d62728", true));
    body.push_str(&ellipse_svg(&ld.test_range, &frame, "#d62728", false));
    let _ = writeln!(
        body,
        "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"12\">green: train, red: test; dashed: 1-sigma, solid: range</text>",
        MARGIN,
        H - 18.0
    );
    document(&body, title)
}
