//! Minimal deterministic SVG line charts and matching gnuplot scripts.

use std::fmt::Write as _;

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 440.0;
const LEFT: f64 = 78.0;
const RIGHT: f64 = 170.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 56.0;
const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf",
];

pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
    pub dashed: bool,
    /// Palette index; defaults to the series position.
    pub color: Option<usize>,
}

impl Series {
    pub fn line(name: impl Into<String>, xs: &[f64], ys: &[f64], dashed: bool) -> Self {
        Self {
            name: name.into(),
            points: xs.iter().copied().zip(ys.iter().copied()).collect(),
            dashed,
            color: None,
        }
    }

    /// Horizontal line at `y` over the span of `xs`.
    pub fn level(name: impl Into<String>, xs: &[f64], y: f64) -> Self {
        let lo = xs.first().copied().unwrap_or(0.0);
        let hi = xs.last().copied().unwrap_or(1.0);
        Self {
            name: name.into(),
            points: vec![(lo, y), (hi, y)],
            dashed: true,
            color: None,
        }
    }

    pub fn with_color(mut self, index: usize) -> Self {
        self.color = Some(index);
        self
    }
}

pub struct Chart {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub log_y: bool,
    pub series: Vec<Series>,
}

fn fmt_num(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    let a = v.abs();
    if (1e-3..1e4).contains(&a) {
        let s = format!("{v:.3}");
        let s = s.trim_end_matches('0').trim_end_matches('.');
        s.to_string()
    } else {
        format!("{v:.1e}")
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Round tick spacing from {1, 2, 5}·10^k giving about `target` intervals.
fn nice_step(span: f64, target: f64) -> f64 {
    let raw = span / target;
    let mag = 10f64.powf(raw.log10().floor());
    let f = raw / mag;
    let nice = if f <= 1.0 {
        1.0
    } else if f <= 2.0 {
        2.0
    } else if f <= 5.0 {
        5.0
    } else {
        10.0
    };
    nice * mag
}

fn linear_ticks(lo: f64, hi: f64) -> (f64, f64, Vec<f64>) {
    let (lo, hi) = if hi - lo <= f64::EPSILON * lo.abs().max(1.0) {
        let pad = 0.5 * lo.abs().max(1.0);
        (lo - pad, hi + pad)
    } else {
        (lo, hi)
    };
    let step = nice_step(hi - lo, 5.0);
    let start = (lo / step).floor() * step;
    let end = (hi / step).ceil() * step;
    let count = ((end - start) / step).round() as usize;
    let ticks = (0..=count).map(|i| start + i as f64 * step).collect();
    (start, end, ticks)
}

impl Chart {
    pub fn to_svg(&self) -> String {
        let map_y = |y: f64| if self.log_y { y.log10() } else { y };
        let usable = |&(x, y): &(f64, f64)| x.is_finite() && y.is_finite() && (!self.log_y || y > 0.0);
        let pts: Vec<(f64, f64)> = self
            .series
            .iter()
            .flat_map(|s| s.points.iter().filter(|p| usable(p)).map(|&(x, y)| (x, map_y(y))))
            .collect();
        let (x_min, x_max) = bounds(pts.iter().map(|p| p.0));
        let (y_min, y_max) = bounds(pts.iter().map(|p| p.1));
        let (x0, x1, x_ticks) = linear_ticks(x_min, x_max);
        let (y0, y1, y_ticks) = if self.log_y {
            let lo = y_min.floor();
            let hi = y_max.ceil().max(lo + 1.0);
            let every = ((hi - lo) / 6.0).ceil().max(1.0);
            let ticks = (0..)
                .map(|i| lo + i as f64 * every)
                .take_while(|t| *t <= hi)
                .collect();
            (lo, hi, ticks)
        } else {
            linear_ticks(y_min, y_max)
        };
        let pw = WIDTH - LEFT - RIGHT;
        let ph = HEIGHT - TOP - BOTTOM;
        let sx = |x: f64| LEFT + (x - x0) / (x1 - x0) * pw;
        let sy = |y: f64| TOP + (y1 - y) / (y1 - y0) * ph;

        let mut s = String::new();
        writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
        )
        .unwrap();
        writeln!(s, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#).unwrap();
        writeln!(
            s,
            r#"<text x="{:.1}" y="24" text-anchor="middle" font-size="15">{}</text>"#,
            LEFT + pw / 2.0,
            escape(&self.title)
        )
        .unwrap();
        for &t in &x_ticks {
            let x = sx(t);
            writeln!(
                s,
                r##"<line x1="{x:.2}" y1="{TOP:.2}" x2="{x:.2}" y2="{:.2}" stroke="#e6e6e6"/>"##,
                TOP + ph
            )
            .unwrap();
            writeln!(
                s,
                r#"<text x="{x:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
                TOP + ph + 18.0,
                fmt_num(t)
            )
            .unwrap();
        }
        for &t in &y_ticks {
            let y = sy(t);
            let label = if self.log_y { format!("1e{}", t as i64) } else { fmt_num(t) };
            writeln!(
                s,
                r##"<line x1="{LEFT:.2}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#e6e6e6"/>"##,
                LEFT + pw
            )
            .unwrap();
            writeln!(
                s,
                r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{label}</text>"#,
                LEFT - 6.0,
                y + 4.0
            )
            .unwrap();
        }
        writeln!(
            s,
            r##"<rect x="{LEFT:.2}" y="{TOP:.2}" width="{pw:.2}" height="{ph:.2}" fill="none" stroke="#333"/>"##
        )
        .unwrap();
        writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            LEFT + pw / 2.0,
            HEIGHT - 14.0,
            escape(&self.x_label)
        )
        .unwrap();
        writeln!(
            s,
            r#"<text x="18" y="{:.2}" text-anchor="middle" transform="rotate(-90 18 {:.2})">{}</text>"#,
            TOP + ph / 2.0,
            TOP + ph / 2.0,
            escape(&self.y_label)
        )
        .unwrap();
        for (i, series) in self.series.iter().enumerate() {
            let color = PALETTE[series.color.unwrap_or(i) % PALETTE.len()];
            let dash = if series.dashed { r#" stroke-dasharray="6 4""# } else { "" };
            let path: Vec<String> = series
                .points
                .iter()
                .filter(|p| usable(p))
                .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(map_y(y))))
                .collect();
            if !path.is_empty() {
                writeln!(
                    s,
                    r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.6"{dash}/>"#,
                    path.join(" ")
                )
                .unwrap();
            }
            let ly = TOP + 10.0 + 18.0 * i as f64;
            let lx = LEFT + pw + 12.0;
            writeln!(
                s,
                r#"<line x1="{lx:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{color}" stroke-width="1.6"{dash}/>"#,
                lx + 24.0
            )
            .unwrap();
            writeln!(
                s,
                r#"<text x="{:.2}" y="{:.2}">{}</text>"#,
                lx + 30.0,
                ly + 4.0,
                escape(&series.name)
            )
            .unwrap();
        }
        s.push_str("</svg>\n");
        s
    }
}

fn bounds(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if lo.is_finite() {
        (lo, hi)
    } else {
        (0.0, 1.0)
    }
}

/// Gnuplot script plotting columns of a CSV file against its first column.
pub fn gnuplot_script(csv: &str, svg: &str, title: &str, columns: &[(usize, &str)], log_y: bool) -> String {
    let mut s = String::new();
    writeln!(s, "set datafile separator ','").unwrap();
    writeln!(s, "set terminal svg size 720,440").unwrap();
    writeln!(s, "set output '{svg}'").unwrap();
    writeln!(s, "set title '{title}'").unwrap();
    writeln!(s, "set key outside right").unwrap();
    if log_y {
        writeln!(s, "set logscale y").unwrap();
    }
    let parts: Vec<String> = columns
        .iter()
        .map(|(c, name)| format!("'{csv}' using 1:{c} with lines title '{name}'"))
        .collect();
    writeln!(s, "plot {}", parts.join(", \\\n     ")).unwrap();
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ticks_cover_range() {
        let (lo, hi, ticks) = linear_ticks(0.13, 9.7);
        assert!(lo <= 0.13 && hi >= 9.7);
        assert_eq!(ticks.first(), Some(&lo));
        assert!(ticks.len() >= 4 && ticks.len() <= 12);
    }

    #[test]
    fn flat_data_gets_padding() {
        let (lo, hi, _) = linear_ticks(2.0, 2.0);
        assert!(lo < 2.0 && hi > 2.0);
    }

    #[test]
    fn svg_is_deterministic() {
        let chart = || Chart {
            title: "a<b".into(),
            x_label: "t".into(),
            y_label: "y".into(),
            log_y: true,
            series: vec![Series::line("d", &[0.0, 1.0, 2.0], &[1.0, 0.0, 1e-3], false)],
        };
        let svg = chart().to_svg();
        assert_eq!(svg, chart().to_svg());
        assert!(svg.contains("a&lt;b"));
        assert!(svg.contains("<polyline"));
    }
}
