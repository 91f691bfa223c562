//! SVG line charts of observed and reconstructed series, each with a CSV
//! sidecar holding the plotted numbers.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Series {
    pub label: String,
    pub values: Vec<f64>,
}

impl Series {
    pub fn new(label: impl Into<String>, values: Vec<f64>) -> Self {
        Series {
            label: label.into(),
            values,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PlotFiles {
    pub svg: PathBuf,
    pub csv: PathBuf,
}

const WIDTH: f64 = 960.0;
const HEIGHT: f64 = 400.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 200.0;
const TOP: f64 = 20.0;
const BOTTOM: f64 = 50.0;
const TICKS: usize = 5;
const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn tick_label(v: f64) -> String {
    let s = format!("{v:.3}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" { "0".to_string() } else { s.to_string() }
}

fn check(truth: &Series, lines: &[Series]) -> Result<()> {
    if truth.values.is_empty() {
        return Err(Error::Plot(format!("series {} is empty", truth.label)));
    }
    for s in std::iter::once(truth).chain(lines) {
        if s.values.len() != truth.values.len() {
            return Err(Error::Plot(format!(
                "series {} has {} points, expected {}",
                s.label,
                s.values.len(),
                truth.values.len()
            )));
        }
        if s.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Plot(format!("series {} has non-finite values", s.label)));
        }
    }
    Ok(())
}

/// Renders truth as markers and every other series as a polyline.
pub fn render_svg(truth: &Series, lines: &[Series]) -> Result<String> {
    check(truth, lines)?;
    let n = truth.values.len();
    let all = std::iter::once(truth).chain(lines).flat_map(|s| s.values.iter().copied());
    let (mut lo, mut hi) = all.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if hi - lo < 1e-12 {
        lo -= 1.0;
        hi += 1.0;
    }
    let pw = WIDTH - LEFT - RIGHT;
    let ph = HEIGHT - TOP - BOTTOM;
    let x = |i: usize| LEFT + if n > 1 { pw * i as f64 / (n - 1) as f64 } else { pw / 2.0 };
    let y = |v: f64| TOP + ph * (hi - v) / (hi - lo);

    let mut svg = String::new();
    writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    )
    .expect("string write");
    writeln!(svg, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#).expect("string write");
    writeln!(
        svg,
        r#"<g class="axes" stroke="black"><line x1="{LEFT}" y1="{b}" x2="{r}" y2="{b}"/><line x1="{LEFT}" y1="{TOP}" x2="{LEFT}" y2="{b}"/></g>"#,
        b = TOP + ph,
        r = LEFT + pw
    )
    .expect("string write");
    svg.push_str("<g class=\"ticks\">\n");
    for k in 0..TICKS {
        let f = k as f64 / (TICKS - 1) as f64;
        let v = lo + (hi - lo) * f;
        let yy = y(v);
        writeln!(
            svg,
            r#"<line x1="{:.1}" y1="{yy:.1}" x2="{LEFT}" y2="{yy:.1}" stroke="black"/><text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#,
            LEFT - 5.0,
            LEFT - 8.0,
            yy + 4.0,
            tick_label(v)
        )
        .expect("string write");
    }
    let mut steps: Vec<usize> = (0..TICKS).map(|k| ((n - 1) as f64 * k as f64 / (TICKS - 1) as f64).round() as usize).collect();
    steps.dedup();
    for i in steps {
        let xx = x(i);
        writeln!(
            svg,
            r#"<line x1="{xx:.1}" y1="{b}" x2="{xx:.1}" y2="{:.1}" stroke="black"/><text x="{xx:.1}" y="{:.1}" text-anchor="middle">{i}</text>"#,
            TOP + ph + 5.0,
            TOP + ph + 18.0,
            b = TOP + ph
        )
        .expect("string write");
    }
    svg.push_str("</g>\n");
    writeln!(
        svg,
        r#"<text class="x-label" x="{:.1}" y="{:.1}" text-anchor="middle">step</text>"#,
        LEFT + pw / 2.0,
        HEIGHT - 10.0
    )
    .expect("string write");
    writeln!(
        svg,
        r#"<text class="y-label" x="15" y="{:.1}" text-anchor="middle" transform="rotate(-90 15 {:.1})">{}</text>"#,
        TOP + ph / 2.0,
        TOP + ph / 2.0,
        escape(&truth.label)
    )
    .expect("string write");

    svg.push_str("<g class=\"truth\" fill=\"black\">");
    for (i, v) in truth.values.iter().enumerate() {
        write!(svg, r#"<circle cx="{:.1}" cy="{:.1}" r="1.5"/>"#, x(i), y(*v)).expect("string write");
    }
    svg.push_str("</g>\n");
    for (k, s) in lines.iter().enumerate() {
        write!(
            svg,
            r#"<polyline class="series" fill="none" stroke="{}" stroke-width="1.2" points=""#,
            PALETTE[k % PALETTE.len()]
        )
        .expect("string write");
        for (i, v) in s.values.iter().enumerate() {
            if i > 0 {
                svg.push(' ');
            }
            write!(svg, "{:.1},{:.1}", x(i), y(*v)).expect("string write");
        }
        svg.push_str("\"/>\n");
    }

    let lx = LEFT + pw + 15.0;
    svg.push_str("<g class=\"legend\">\n");
    writeln!(
        svg,
        r#"<circle cx="{:.1}" cy="{:.1}" r="3" fill="black"/><text x="{:.1}" y="{:.1}">{}</text>"#,
        lx + 10.0,
        TOP + 10.0,
        lx + 25.0,
        TOP + 14.0,
        escape(&truth.label)
    )
    .expect("string write");
    for (k, s) in lines.iter().enumerate() {
        let ly = TOP + 10.0 + 18.0 * (k + 1) as f64;
        writeln!(
            svg,
            r#"<line x1="{lx:.1}" y1="{ly:.1}" x2="{:.1}" y2="{ly:.1}" stroke="{}" stroke-width="2"/><text x="{:.1}" y="{:.1}">{}</text>"#,
            lx + 20.0,
            PALETTE[k % PALETTE.len()],
            lx + 25.0,
            ly + 4.0,
            escape(&s.label)
        )
        .expect("string write");
    }
    svg.push_str("</g>\n</svg>\n");
    Ok(svg)
}

/// The plotted numbers: a `step` column, then truth, then each line.
pub fn plot_csv(truth: &Series, lines: &[Series]) -> Result<String> {
    check(truth, lines)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    let series: Vec<&Series> = std::iter::once(truth).chain(lines).collect();
    let header: Vec<&str> = std::iter::once("step").chain(series.iter().map(|s| s.label.as_str())).collect();
    w.write_record(&header).map_err(|e| Error::Plot(e.to_string()))?;
    for i in 0..truth.values.len() {
        let rec: Vec<String> = std::iter::once(i.to_string())
            .chain(series.iter().map(|s| s.values[i].to_string()))
            .collect();
        w.write_record(&rec).map_err(|e| Error::Plot(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Plot(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Writes the chart to `path` and its data next to it with a `.csv`
/// extension.
pub fn emit_plot(truth: &Series, lines: &[Series], path: &Path) -> Result<PlotFiles> {
    let svg = render_svg(truth, lines)?;
    let data = plot_csv(truth, lines)?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::persistence(dir, e))?;
    }
    let csv_path = path.with_extension("csv");
    std::fs::write(path, svg).map_err(|e| Error::persistence(path, e))?;
    std::fs::write(&csv_path, data).map_err(|e| Error::persistence(&csv_path, e))?;
    Ok(PlotFiles {
        svg: path.to_path_buf(),
        csv: csv_path,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn year() -> (Series, Vec<Series>) {
        let truth: Vec<f64> = (0..365).map(|i| (i as f64 * 0.0172).sin() * 3.0 + 2.0).collect();
        let a: Vec<f64> = truth.iter().enumerate().map(|(i, v)| v + (i as f64 * 0.9).cos() * 0.2).collect();
        let b: Vec<f64> = truth.iter().enumerate().map(|(i, v)| v + (i as f64 * 0.4).sin() * 0.1).collect();
        (
            Series::new("D.v1", truth),
            vec![Series::new("initialized", a), Series::new("B,C -> D", b)],
        )
    }

    #[test]
    fn identical_series_give_valid_svg() {
        let s = Series::new("x", vec![1.0, 2.0, 1.5]);
        let svg = render_svg(&s, &[Series::new("a", s.values.clone()), Series::new("b", s.values.clone())]).unwrap();
        let doc = roxmltree::Document::parse(&svg).unwrap();
        let polylines: Vec<_> = doc.descendants().filter(|n| n.has_tag_name("polyline")).collect();
        assert_eq!(polylines.len(), 2);
        assert_eq!(polylines[0].attribute("points"), polylines[1].attribute("points"));
    }

    #[test]
    fn chart_structure() {
        let (truth, lines) = year();
        let svg = render_svg(&truth, &lines).unwrap();
        let doc = roxmltree::Document::parse(&svg).unwrap();
        let truth_g = doc.descendants().find(|n| n.attribute("class") == Some("truth")).unwrap();
        assert_eq!(truth_g.children().filter(|n| n.has_tag_name("circle")).count(), 365);
        let texts: Vec<&str> = doc.descendants().filter(|n| n.has_tag_name("text")).filter_map(|n| n.text()).collect();
        for label in ["step", "D.v1", "initialized", "B,C -> D"] {
            assert!(texts.contains(&label), "{label}");
        }
        assert!(svg.len() <= 200 * 1024, "{} bytes", svg.len());
    }

    #[test]
    fn sidecar_equals_input() {
        let (truth, lines) = year();
        let dir = tempfile::tempdir().unwrap();
        let files = emit_plot(&truth, &lines, &dir.path().join("plots/d.svg")).unwrap();
        let mut rdr = csv::Reader::from_path(&files.csv).unwrap();
        let header: Vec<String> = rdr.headers().unwrap().iter().map(String::from).collect();
        assert_eq!(header, ["step", "D.v1", "initialized", "B,C -> D"]);
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec.unwrap();
            assert_eq!(rec[0].parse::<usize>().unwrap(), i);
            assert_eq!(rec[1].parse::<f64>().unwrap(), truth.values[i]);
            assert_eq!(rec[2].parse::<f64>().unwrap(), lines[0].values[i]);
            assert_eq!(rec[3].parse::<f64>().unwrap(), lines[1].values[i]);
        }
    }

    #[test]
    fn empty_and_ragged_series_are_rejected() {
        let e = Series::new("x", vec![]);
        assert!(matches!(render_svg(&e, &[]), Err(Error::Plot(_))));
        let t = Series::new("x", vec![1.0, 2.0]);
        assert!(matches!(render_svg(&t, &[Series::new("y", vec![1.0])]), Err(Error::Plot(_))));
        assert!(matches!(
            emit_plot(&e, &[], Path::new("/nonexistent/p.svg")),
            Err(Error::Plot(_))
        ));
    }

    #[test]
    fn matches_the_golden_chart() {
        let truth = Series::new("C.v1 & <raw>", vec![0.0, 1.0, 4.0, 2.0]);
        let line = Series::new("A -> C", vec![0.5, 1.5, 3.0, 2.5]);
        let svg = render_svg(&truth, std::slice::from_ref(&line)).unwrap();
        assert_eq!(svg, include_str!("../../tests/golden/plot_small.svg"));
        assert_eq!(plot_csv(&truth, &[line]).unwrap(), include_str!("../../tests/golden/plot_small.csv"));
    }
}
