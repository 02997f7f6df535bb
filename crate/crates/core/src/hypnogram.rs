//! Hypnogram rendering: a compact text line and a stepped SVG plot.

use std::fmt::Write as _;

use crate::data::Stage;
use crate::error::{Error, Result};
use crate::model::EPOCH_SECONDS;

/// Top-to-bottom row order of the plot.
pub const PLOT_ORDER: [Stage; 5] = [Stage::W, Stage::Rem, Stage::N1, Stage::N2, Stage::N3];

pub fn stage_char(stage: Stage) -> char {
    match stage {
        Stage::W => 'W',
        Stage::N1 => '1',
        Stage::N2 => '2',
        Stage::N3 => '3',
        Stage::Rem => 'R',
    }
}

/// One character per epoch.
pub fn render_text(stages: &[Stage]) -> String {
    stages.iter().map(|&s| stage_char(s)).collect()
}

/// Parses whitespace- or comma-separated stage tokens. Unknown tokens are
/// an error rather than being skipped.
pub fn parse_stages(text: &str) -> Result<Vec<Stage>> {
    text.split(|c: char| c.is_whitespace() || c == ',')
        .filter(|t| !t.is_empty())
        .map(str::parse)
        .collect()
}

#[derive(Clone, Debug)]
pub struct SvgStyle {
    pub width: f64,
    pub height: f64,
    pub title: Option<String>,
}

impl Default for SvgStyle {
    fn default() -> Self {
        SvgStyle {
            width: 900.0,
            height: 240.0,
            title: None,
        }
    }
}

const MARGIN_LEFT: f64 = 50.0;
const MARGIN_RIGHT: f64 = 15.0;
const MARGIN_TOP: f64 = 25.0;
const MARGIN_BOTTOM: f64 = 35.0;

fn row(stage: Stage) -> usize {
    PLOT_ORDER.iter().position(|&s| s == stage).expect("every stage has a row")
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Step plot of `(epoch_index, stage)` pairs sorted by epoch index. Missing
/// epochs (gaps in the index) break the line. The x axis is in hours from
/// the first epoch of the recording. The output depends only on the input.
pub fn render_svg(epochs: &[(usize, Stage)], style: &SvgStyle) -> Result<String> {
    if epochs.is_empty() {
        return Err(Error::invalid("render_svg", "no epochs to plot"));
    }
    if epochs.windows(2).any(|w| w[1].0 <= w[0].0) {
        return Err(Error::invalid("render_svg", "epoch indices must be strictly increasing"));
    }
    let plot_w = style.width - MARGIN_LEFT - MARGIN_RIGHT;
    let plot_h = style.height - MARGIN_TOP - MARGIN_BOTTOM;
    if plot_w <= 0.0 || plot_h <= 0.0 {
        return Err(Error::invalid("render_svg", "canvas too small"));
    }
    let end_epoch = epochs.last().unwrap().0 + 1;
    let hours = (end_epoch * EPOCH_SECONDS) as f64 / 3600.0;
    let x = |epoch: usize| MARGIN_LEFT + plot_w * epoch as f64 / end_epoch as f64;
    let row_h = plot_h / (PLOT_ORDER.len() - 1) as f64;
    let y = |s: Stage| MARGIN_TOP + row_h * row(s) as f64;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="11">"#,
        w = style.width,
        h = style.height
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    if let Some(t) = &style.title {
        let _ = writeln!(svg, r#"<text x="{MARGIN_LEFT}" y="15">{}</text>"#, escape(t));
    }
    for s in PLOT_ORDER {
        let yy = y(s);
        let _ = writeln!(
            svg,
            r##"<line x1="{MARGIN_LEFT}" y1="{yy:.2}" x2="{:.2}" y2="{yy:.2}" stroke="#ddd"/>"##,
            MARGIN_LEFT + plot_w
        );
        let _ = writeln!(
            svg,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#,
            MARGIN_LEFT - 6.0,
            yy + 4.0,
            s.name()
        );
    }

    // Hour ticks; at least the start and the end.
    let step = (hours / 8.0).ceil().max(1.0);
    let axis_y = MARGIN_TOP + plot_h + 8.0;
    let mut h = 0.0;
    while h <= hours + 1e-9 {
        let xx = MARGIN_LEFT + plot_w * h / hours;
        let _ = writeln!(
            svg,
            r##"<line x1="{xx:.2}" y1="{:.2}" x2="{xx:.2}" y2="{:.2}" stroke="#888"/>"##,
            axis_y - 4.0,
            axis_y
        );
        let _ = writeln!(svg, r#"<text x="{xx:.2}" y="{:.2}" text-anchor="middle">{h}</text>"#, axis_y + 12.0);
        h += step;
    }
    let _ = writeln!(
        svg,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">time (h)</text>"#,
        MARGIN_LEFT + plot_w / 2.0,
        style.height - 3.0
    );

    // One polyline per contiguous run of epochs.
    let mut start = 0;
    while start < epochs.len() {
        let mut end = start + 1;
        while end < epochs.len() && epochs[end].0 == epochs[end - 1].0 + 1 {
            end += 1;
        }
        let mut points = Vec::with_capacity(2 * (end - start));
        for &(e, s) in &epochs[start..end] {
            points.push(format!("{:.2},{:.2}", x(e), y(s)));
            points.push(format!("{:.2},{:.2}", x(e + 1), y(s)));
        }
        let _ = writeln!(
            svg,
            r#"<polyline fill="none" stroke="black" stroke-width="1.2" points="{}"/>"#,
            points.join(" ")
        );
        start = end;
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_and_parse() {
        let s = parse_stages("W, N1 N2\nN3 REM r").unwrap();
        assert_eq!(render_text(&s), "W123RR");
        assert!(parse_stages("W N4").is_err());
    }

    #[test]
    fn svg_is_deterministic_and_breaks_on_gaps() {
        let ep = [(0, Stage::W), (1, Stage::N1), (2, Stage::N2), (10, Stage::Rem)];
        let a = render_svg(&ep, &SvgStyle::default()).unwrap();
        let b = render_svg(&ep, &SvgStyle::default()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.matches("<polyline").count(), 2);
        assert!(a.starts_with("<svg") && a.ends_with("</svg>\n"));
        assert!(render_svg(&[], &SvgStyle::default()).is_err());
        assert!(render_svg(&[(2, Stage::W), (1, Stage::W)], &SvgStyle::default()).is_err());
    }

    #[test]
    fn rows_top_to_bottom() {
        assert!(row(Stage::W) < row(Stage::Rem));
        assert!(row(Stage::Rem) < row(Stage::N1));
        assert!(row(Stage::N2) < row(Stage::N3));
    }
}
