//! SVG figures. Rendering is best effort: the caller logs failures and moves on.

use std::path::{Path, PathBuf};

use plotters::prelude::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Style {
    Line,
    Points,
}

#[derive(Debug, Clone)]
pub struct Series {
    pub label: String,
    pub style: Style,
    pub points: Vec<(f64, f64)>,
}

impl Series {
    pub fn line(label: impl Into<String>, points: Vec<(f64, f64)>) -> Self {
        Series { label: label.into(), style: Style::Line, points }
    }

    pub fn points(label: impl Into<String>, points: Vec<(f64, f64)>) -> Self {
        Series { label: label.into(), style: Style::Points, points }
    }

    /// Right-continuous step function through `(x_i, y_i)`, drawn up to `x_end`.
    pub fn steps(label: impl Into<String>, knots: &[(f64, f64)], x_end: f64) -> Self {
        let mut points = Vec::with_capacity(2 * knots.len());
        for (i, &(x, y)) in knots.iter().enumerate() {
            points.push((x, y));
            let next = knots.get(i + 1).map_or(x_end, |k| k.0);
            points.push((next, y));
        }
        Series::line(label, points)
    }
}

#[derive(Debug, Clone)]
pub struct Figure {
    /// File stem inside `plots/`.
    pub name: String,
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<Series>,
}

fn bounds(series: &[Series]) -> Option<((f64, f64), (f64, f64))> {
    let pts = series.iter().flat_map(|s| s.points.iter()).filter(|p| p.0.is_finite() && p.1.is_finite());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in pts {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !x0.is_finite() {
        return None;
    }
    let pad = |lo: f64, hi: f64| {
        let w = if hi > lo { hi - lo } else { lo.abs().max(1.0) };
        (lo - 0.05 * w, hi + 0.05 * w)
    };
    Some((pad(x0, x1), pad(y0, y1)))
}

const PALETTE: [RGBColor; 6] = [
    RGBColor(31, 119, 180),
    RGBColor(214, 39, 40),
    RGBColor(44, 160, 44),
    RGBColor(148, 103, 189),
    RGBColor(255, 127, 14),
    RGBColor(23, 190, 207),
];

pub fn render(figure: &Figure, dir: &Path) -> Result<PathBuf, Box<dyn std::error::Error>> {
    let file = dir.join(format!("{}.svg", figure.name));
    let ((x0, x1), (y0, y1)) = bounds(&figure.series).ok_or("figure has no finite points")?;
    draw(figure, &file, (x0, x1), (y0, y1))?;
    Ok(file)
}

fn draw(
    figure: &Figure,
    file: &Path,
    (x0, x1): (f64, f64),
    (y0, y1): (f64, f64),
) -> Result<(), Box<dyn std::error::Error>> {
    let root = SVGBackend::new(file, (800, 500)).into_drawing_area();
    root.fill(&WHITE)?;
    let mut chart = ChartBuilder::on(&root)
        .caption(&figure.title, ("sans-serif", 20))
        .margin(12)
        .x_label_area_size(40)
        .y_label_area_size(60)
        .build_cartesian_2d(x0..x1, y0..y1)?;
    chart.configure_mesh().x_desc(figure.x_label.as_str()).y_desc(figure.y_label.as_str()).draw()?;
    for (i, s) in figure.series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let pts = s.points.iter().copied().filter(|p| p.0.is_finite() && p.1.is_finite());
        let anno = match s.style {
            Style::Line => chart.draw_series(LineSeries::new(pts, color.stroke_width(1)))?,
            Style::Points => chart.draw_series(pts.map(|p| Circle::new(p, 3, color.filled())))?,
        };
        anno.label(s.label.as_str())
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 16, y)], color.stroke_width(2)));
    }
    chart.configure_series_labels().background_style(WHITE.mix(0.8)).border_style(BLACK).draw()?;
    root.present()?;
    Ok(())
}
