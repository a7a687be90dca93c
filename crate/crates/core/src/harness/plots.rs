//! Minimal SVG plotting: class-colored scatters and overlaid histograms.
//! Output is plain, well-formed XML with no external dependencies.

use crate::error::{Error, Result};
use std::fmt::Write as _;
use std::path::Path;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 480.0;
const MARGIN: f64 = 48.0;

const PALETTE: [&str; 8] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
];

pub fn class_color(i: usize) -> &'static str {
    PALETTE[i % PALETTE.len()]
}

/// One labeled point set; hollow markers distinguish e.g. generated from
/// real samples of the same class.
#[derive(Debug, Clone)]
pub struct ScatterSeries {
    pub label: String,
    pub color: String,
    pub filled: bool,
    pub points: Vec<[f64; 2]>,
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn svg_open(title: &str) -> String {
    let mut s = String::new();
    let _ = write!(
        s,
        "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n\
         <svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" \
         viewBox=\"0 0 {WIDTH} {HEIGHT}\">\n\
         <rect x=\"0\" y=\"0\" width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"white\"/>\n\
         <text x=\"{}\" y=\"24\" font-family=\"sans-serif\" font-size=\"16\" \
         text-anchor=\"middle\">{}</text>\n",
        WIDTH / 2.0,
        xml_escape(title)
    );
    s
}

fn write_placeholder(path: &Path, title: &str, message: &str) -> Result<()> {
    let mut s = svg_open(title);
    let _ = write!(
        s,
        "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"14\" \
         text-anchor=\"middle\" fill=\"#888888\">{}</text>\n</svg>\n",
        WIDTH / 2.0,
        HEIGHT / 2.0,
        xml_escape(message)
    );
    std::fs::write(path, s)?;
    Ok(())
}

struct Frame {
    x_min: f64,
    x_max: f64,
    y_min: f64,
    y_max: f64,
}

impl Frame {
    fn of(points: impl Iterator<Item = [f64; 2]>) -> Option<Frame> {
        let mut f: Option<Frame> = None;
        for [x, y] in points {
            if !x.is_finite() || !y.is_finite() {
                continue;
            }
            match &mut f {
                None => f = Some(Frame { x_min: x, x_max: x, y_min: y, y_max: y }),
                Some(f) => {
                    f.x_min = f.x_min.min(x);
                    f.x_max = f.x_max.max(x);
                    f.y_min = f.y_min.min(y);
                    f.y_max = f.y_max.max(y);
                }
            }
        }
        if let Some(f) = &mut f {
            // degenerate ranges get a unit pad so division stays finite
            if f.x_max - f.x_min < 1e-12 {
                f.x_min -= 0.5;
                f.x_max += 0.5;
            }
            if f.y_max - f.y_min < 1e-12 {
                f.y_min -= 0.5;
                f.y_max += 0.5;
            }
        }
        f
    }

    fn px(&self, x: f64) -> f64 {
        MARGIN + (x - self.x_min) / (self.x_max - self.x_min) * (WIDTH - 2.0 * MARGIN)
    }

    fn py(&self, y: f64) -> f64 {
        HEIGHT - MARGIN - (y - self.y_min) / (self.y_max - self.y_min) * (HEIGHT - 2.0 * MARGIN)
    }
}

/// Scatter plot of 2-d point sets. Empty input produces a placeholder
/// figure rather than an error.
pub fn write_scatter_svg(path: &Path, title: &str, series: &[ScatterSeries]) -> Result<()> {
    let all = series.iter().flat_map(|s| s.points.iter().copied());
    let Some(frame) = Frame::of(all) else {
        return write_placeholder(path, title, "no points to plot");
    };
    let mut s = svg_open(title);
    let _ = write!(
        s,
        "<rect x=\"{MARGIN}\" y=\"{MARGIN}\" width=\"{}\" height=\"{}\" fill=\"none\" \
         stroke=\"#cccccc\"/>\n",
        WIDTH - 2.0 * MARGIN,
        HEIGHT - 2.0 * MARGIN
    );
    for (i, ser) in series.iter().enumerate() {
        let (fill, stroke) = if ser.filled {
            (ser.color.as_str(), "none".to_string())
        } else {
            ("none", ser.color.clone())
        };
        for [x, y] in &ser.points {
            if !x.is_finite() || !y.is_finite() {
                continue;
            }
            let _ = write!(
                s,
                "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"2.5\" fill=\"{}\" stroke=\"{}\" \
                 fill-opacity=\"0.6\"/>\n",
                frame.px(*x),
                frame.py(*y),
                fill,
                stroke
            );
        }
        let ly = MARGIN + 16.0 * i as f64 + 4.0;
        let _ = write!(
            s,
            "<circle cx=\"{}\" cy=\"{}\" r=\"4\" fill=\"{}\"/>\n\
             <text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"12\">{}</text>\n",
            WIDTH - MARGIN - 120.0,
            ly,
            ser.color,
            WIDTH - MARGIN - 110.0,
            ly + 4.0,
            xml_escape(&ser.label)
        );
    }
    s.push_str("</svg>\n");
    std::fs::write(path, s)?;
    Ok(())
}

/// Equal-width binning over `[min, max]`; the top edge is inclusive so the
/// counts always sum to the number of finite values.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    pub bin_left: Vec<f64>,
    pub counts: Vec<usize>,
    pub bin_width: f64,
}

pub fn histogram(values: &[f64], bins: usize, range: Option<(f64, f64)>) -> Result<Histogram> {
    if bins == 0 {
        return Err(Error::InvalidConfig("histogram needs at least one bin".into()));
    }
    let finite: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
    let (lo, hi) = match range {
        Some(r) => r,
        None => {
            let lo = finite.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = finite.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if finite.is_empty() {
                (0.0, 1.0)
            } else if hi - lo < 1e-12 {
                (lo - 0.5, hi + 0.5)
            } else {
                (lo, hi)
            }
        }
    };
    if !(hi > lo) {
        return Err(Error::InvalidConfig("histogram range must be nonempty".into()));
    }
    let width = (hi - lo) / bins as f64;
    let mut counts = vec![0usize; bins];
    for v in finite {
        if v < lo || v > hi {
            continue;
        }
        let mut b = ((v - lo) / width) as usize;
        if b >= bins {
            b = bins - 1;
        }
        counts[b] += 1;
    }
    let bin_left = (0..bins).map(|b| lo + b as f64 * width).collect();
    Ok(Histogram { bin_left, counts, bin_width: width })
}

pub fn write_histogram_csv(path: &Path, hist: &Histogram) -> Result<()> {
    let mut out = String::from("bin_left,count\n");
    for (l, c) in hist.bin_left.iter().zip(&hist.counts) {
        let _ = writeln!(out, "{l},{c}");
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Overlaid bar histograms over a shared range; empty input produces a
/// placeholder figure.
pub fn write_histogram_svg(
    path: &Path,
    title: &str,
    series: &[(&str, &[f64])],
    bins: usize,
) -> Result<()> {
    let finite: Vec<f64> = series
        .iter()
        .flat_map(|(_, v)| v.iter().copied())
        .filter(|v| v.is_finite())
        .collect();
    if finite.is_empty() {
        return write_placeholder(path, title, "no values to plot");
    }
    let lo = finite.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = finite.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let range = if hi - lo < 1e-12 { (lo - 0.5, hi + 0.5) } else { (lo, hi) };
    let hists: Vec<Histogram> = series
        .iter()
        .map(|(_, v)| histogram(v, bins, Some(range)))
        .collect::<Result<_>>()?;
    let peak = hists
        .iter()
        .flat_map(|h| h.counts.iter().copied())
        .max()
        .unwrap_or(1)
        .max(1) as f64;
    let mut s = svg_open(title);
    let plot_w = WIDTH - 2.0 * MARGIN;
    let plot_h = HEIGHT - 2.0 * MARGIN;
    let bar_w = plot_w / bins as f64;
    for (i, ((label, _), hist)) in series.iter().zip(&hists).enumerate() {
        let color = class_color(i);
        for (b, &c) in hist.counts.iter().enumerate() {
            if c == 0 {
                continue;
            }
            let h = c as f64 / peak * plot_h;
            let _ = write!(
                s,
                "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"{}\" \
                 fill-opacity=\"0.45\"/>\n",
                MARGIN + b as f64 * bar_w,
                HEIGHT - MARGIN - h,
                bar_w,
                h,
                color
            );
        }
        let ly = MARGIN + 16.0 * i as f64 + 4.0;
        let _ = write!(
            s,
            "<rect x=\"{}\" y=\"{}\" width=\"10\" height=\"10\" fill=\"{}\"/>\n\
             <text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"12\">{}</text>\n",
            WIDTH - MARGIN - 140.0,
            ly - 8.0,
            color,
            WIDTH - MARGIN - 126.0,
            ly + 2.0,
            xml_escape(label)
        );
    }
    s.push_str("</svg>\n");
    std::fs::write(path, s)?;
    Ok(())
}

#[cfg(test)]
pub(crate) fn assert_well_formed_xml(text: &str) {
    // tag-balance check: every opened element is closed in order
    let mut stack: Vec<String> = Vec::new();
    let mut rest = text;
    while let Some(start) = rest.find('<') {
        let end = rest[start..].find('>').expect("unterminated tag") + start;
        let tag = &rest[start + 1..end];
        rest = &rest[end + 1..];
        if tag.starts_with('?') || tag.starts_with('!') {
            continue;
        }
        if let Some(name) = tag.strip_prefix('/') {
            let open = stack.pop().unwrap_or_else(|| panic!("stray closing tag {name}"));
            assert_eq!(open, name, "mismatched closing tag");
        } else if !tag.ends_with('/') {
            let name: String = tag.split_whitespace().next().unwrap().to_string();
            stack.push(name);
        }
    }
    assert!(stack.is_empty(), "unclosed tags: {stack:?}");
    assert!(!rest.contains('>'), "stray '>' outside tags is fine in text, but '<' must pair");
}
