//! Accuracy-versus-state line charts as hand-written SVG.

use std::fmt::Write as _;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const LEFT: f64 = 60.0;
const RIGHT: f64 = 170.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;
const COLORS: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
];

fn field_index(headers: &csv::StringRecord, name: &str) -> Option<usize> {
    headers.iter().position(|h| h == name)
}

/// Read series from a sweep CSV (one series per `variant`) or a run log
/// (with- and without-compensation series).
pub fn read_series(text: &str, source_name: &str) -> Result<Vec<Series>> {
    let mut reader = csv::ReaderBuilder::new().from_reader(text.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| Error::parse(source_name, 1, e.to_string()))?
        .clone();
    let need = |name: &str| {
        field_index(&headers, name).ok_or_else(|| Error::parse(source_name, 1, format!("missing column `{name}`")))
    };
    let state_col = need("state")?;
    let columns: Vec<(Option<usize>, usize, String)> = match field_index(&headers, "variant") {
        Some(v) => vec![(Some(v), need("accuracy")?, String::new())],
        None => vec![
            (None, need("acc_with_comp")?, "with compensation".to_string()),
            (None, need("acc_without_comp")?, "without compensation".to_string()),
        ],
    };
    let mut series: Vec<Series> = Vec::new();
    let mut rows = 0;
    for (i, record) in reader.records().enumerate() {
        let line = i + 2;
        let record = record.map_err(|e| Error::parse(source_name, line, e.to_string()))?;
        let get = |col: usize| record.get(col).unwrap_or("").trim();
        let state: f64 = get(state_col)
            .parse()
            .map_err(|_| Error::parse(source_name, line, format!("bad state `{}`", get(state_col))))?;
        for (variant, value_col, fixed) in &columns {
            let raw = get(*value_col);
            if raw.is_empty() {
                continue;
            }
            let y: f64 = raw
                .parse()
                .map_err(|_| Error::parse(source_name, line, format!("bad accuracy `{raw}`")))?;
            if !y.is_finite() {
                return Err(Error::parse(source_name, line, "non-finite accuracy"));
            }
            let label = variant.map(|v| get(v).to_string()).unwrap_or_else(|| fixed.clone());
            match series.iter_mut().find(|s| s.label == label) {
                Some(s) => s.points.push((state, y)),
                None => series.push(Series {
                    label,
                    points: vec![(state, y)],
                }),
            }
        }
        rows += 1;
    }
    if rows == 0 {
        return Err(Error::parse(source_name, 2, "no data rows"));
    }
    Ok(series)
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Line chart of accuracy (0 to 1) against state.
pub fn render_svg(series: &[Series], title: &str) -> String {
    let xs = series.iter().flat_map(|s| s.points.iter().map(|p| p.0));
    let (mut lo, mut hi) = xs.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(x), b.max(x)));
    if !lo.is_finite() {
        (lo, hi) = (1.0, 1.0);
    }
    if hi - lo < 1.0 {
        lo -= 0.5;
        hi += 0.5;
    }
    let plot_w = WIDTH - LEFT - RIGHT;
    let plot_h = HEIGHT - TOP - BOTTOM;
    let px = |x: f64| LEFT + (x - lo) / (hi - lo) * plot_w;
    let py = |y: f64| TOP + (1.0 - y.clamp(0.0, 1.0)) * plot_h;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="24" text-anchor="middle" font-size="14">{}</text>"#,
        LEFT + plot_w / 2.0,
        escape(title)
    );
    for i in 0..=5 {
        let y = i as f64 / 5.0;
        let _ = writeln!(
            s,
            r##"<line x1="{LEFT}" y1="{0:.2}" x2="{1:.2}" y2="{0:.2}" stroke="#dddddd"/><text x="{2:.2}" y="{3:.2}" text-anchor="end">{y:.1}</text>"##,
            py(y),
            LEFT + plot_w,
            LEFT - 6.0,
            py(y) + 4.0
        );
    }
    let first = lo.ceil() as i64;
    let last = hi.floor() as i64;
    for x in first..=last {
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{x}</text>"#,
            px(x as f64),
            TOP + plot_h + 18.0
        );
    }
    let _ = writeln!(
        s,
        r#"<rect x="{LEFT}" y="{TOP}" width="{plot_w}" height="{plot_h}" fill="none" stroke="black"/>"#
    );
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">state</text>"#,
        LEFT + plot_w / 2.0,
        HEIGHT - 10.0
    );
    let _ = writeln!(
        s,
        r#"<text x="16" y="{:.2}" text-anchor="middle" transform="rotate(-90 16 {:.2})">accuracy</text>"#,
        TOP + plot_h / 2.0,
        TOP + plot_h / 2.0
    );
    for (i, ser) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let pts: Vec<String> = ser
            .points
            .iter()
            .map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y)))
            .collect();
        if pts.len() > 1 {
            let _ = writeln!(
                s,
                r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
                pts.join(" ")
            );
        }
        for &(x, y) in &ser.points {
            let _ = writeln!(
                s,
                r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{color}"/>"#,
                px(x),
                py(y)
            );
        }
        let ly = TOP + 10.0 + 18.0 * i as f64;
        let lx = WIDTH - RIGHT + 12.0;
        let _ = writeln!(
            s,
            r#"<line x1="{lx:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{color}" stroke-width="2"/><text x="{:.2}" y="{:.2}">{}</text>"#,
            lx + 20.0,
            lx + 26.0,
            ly + 4.0,
            escape(&ser.label)
        );
    }
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    const RUNLOG: &str = "state,classes_seen,acc_with_comp,acc_without_comp,loss_final,seconds\n\
        1,2,1.0,1.0,0.1,\n2,4,0.9,0.8,0.2,\n";

    #[test]
    fn run_log_gives_two_series() {
        let s = read_series(RUNLOG, "r").unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s[0].label, "with compensation");
        assert_eq!(s[1].points, vec![(1.0, 1.0), (2.0, 0.8)]);
    }

    #[test]
    fn blank_values_are_skipped() {
        let csv = "state,classes_seen,acc_with_comp,acc_without_comp,loss_final,seconds\n1,2,,0.5,0.1,\n";
        let s = read_series(csv, "r").unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].label, "without compensation");
    }

    #[test]
    fn variants_become_series_in_order() {
        let csv = "variant,state,accuracy\nOurs,1,0.9\nw/oAG,1,0.8\nOurs,2,0.85\nw/oGA,1,0.7\nw/oSF,1,0.6\n";
        let s = read_series(csv, "v").unwrap();
        let labels: Vec<_> = s.iter().map(|x| x.label.as_str()).collect();
        assert_eq!(labels, ["Ours", "w/oAG", "w/oGA", "w/oSF"]);
        let svg = render_svg(&s, "ablation");
        assert_eq!(svg.matches("<polyline").count(), 1);
        assert_eq!(svg.matches("<circle").count(), 5);
        for l in labels {
            assert!(svg.contains(&format!(">{l}</text>")));
        }
    }

    #[test]
    fn single_row_is_a_single_point() {
        let s = read_series("variant,state,accuracy\nOurs,3,0.5\n", "v").unwrap();
        let svg = render_svg(&s, "one");
        assert_eq!(svg.matches("<circle").count(), 1);
        assert!(!svg.contains("<polyline"));
        assert!(svg.contains(r#"cx="265.00""#), "{svg}");
    }

    #[test]
    fn rendering_is_deterministic() {
        let s = read_series(RUNLOG, "r").unwrap();
        assert_eq!(render_svg(&s, "t"), render_svg(&read_series(RUNLOG, "r").unwrap(), "t"));
    }

    #[test]
    fn malformed_csv_is_a_parse_error() {
        assert!(matches!(
            read_series("state,accuracy\n1,0.5\n", "x"),
            Err(Error::Parse { line: 1, .. })
        ));
        assert!(matches!(
            read_series("variant,state,accuracy\nA,one,0.5\n", "x"),
            Err(Error::Parse { line: 2, .. })
        ));
        assert!(matches!(
            read_series("variant,state,accuracy\nA,1,0.5\nB,2\n", "x"),
            Err(Error::Parse { line: 3, .. })
        ));
        assert!(matches!(
            read_series("variant,state,accuracy\n", "x"),
            Err(Error::Parse { .. })
        ));
    }
}
