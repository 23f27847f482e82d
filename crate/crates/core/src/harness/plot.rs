use std::fmt::Write;
use std::str::FromStr;

use super::run::{summarize, BenchRow, Summary};
use crate::error::{LcdError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    ErrF,
    ErrLambda,
    DagErr,
    Runtime,
}

impl Metric {
    pub fn column(self) -> &'static str {
        match self {
            Metric::ErrF => "err_F",
            Metric::ErrLambda => "err_lambda",
            Metric::DagErr => "dag_err",
            Metric::Runtime => "runtime_ms",
        }
    }

    fn of(self, s: &Summary) -> f64 {
        match self {
            Metric::ErrF => s.err_f,
            Metric::ErrLambda => s.err_lambda,
            Metric::DagErr => s.dag_err,
            Metric::Runtime => s.runtime_ms,
        }
    }
}

impl FromStr for Metric {
    type Err = LcdError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "err_F" | "err_f" => Ok(Metric::ErrF),
            "err_lambda" => Ok(Metric::ErrLambda),
            "dag_err" => Ok(Metric::DagErr),
            "runtime_ms" => Ok(Metric::Runtime),
            other => Err(LcdError::Parse(format!("unknown metric `{other}`"))),
        }
    }
}

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const LEFT: f64 = 80.0;
const RIGHT: f64 = 170.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 60.0;
const STYLES: [(&str, &str); 4] = [("#1b6ca8", ""), ("#c0392b", "6 4"), ("#27864a", "2 3"), ("#7d3c98", "10 3 2 3")];

/// y-axis mapping: logarithmic when some median is positive, else a flat `[0, 1]` axis.
enum Axis {
    Log { lo: f64, hi: f64 },
    Linear,
}

impl Axis {
    fn fit(values: &[f64]) -> Axis {
        let pos: Vec<f64> = values.iter().copied().filter(|v| v.is_finite() && *v > 0.0).collect();
        if pos.is_empty() {
            return Axis::Linear;
        }
        let lo = pos.iter().copied().fold(f64::INFINITY, f64::min).log10().floor();
        let mut hi = pos.iter().copied().fold(0.0, f64::max).log10().ceil();
        if hi <= lo {
            hi = lo + 1.0;
        }
        Axis::Log { lo, hi }
    }

    /// Fraction of the plot height; non-positive values sit on the floor, infinite ones on the ceiling.
    fn frac(&self, v: f64) -> f64 {
        match *self {
            Axis::Log { lo, hi } => {
                if v.is_nan() || v <= 0.0 {
                    0.0
                } else if v.is_infinite() {
                    1.0
                } else {
                    ((v.log10() - lo) / (hi - lo)).clamp(0.0, 1.0)
                }
            }
            Axis::Linear => {
                if v.is_infinite() {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    fn ticks(&self) -> Vec<(f64, String)> {
        match *self {
            Axis::Log { lo, hi } => {
                (lo as i32..=hi as i32).map(|e| (10f64.powi(e), format!("1e{e}"))).collect()
            }
            Axis::Linear => vec![(0.0, "0".into())],
        }
    }
}

/// Median of `metric` against `q`, one polyline per method.
pub fn render_svg(rows: &[BenchRow], metric: Metric) -> Result<String> {
    if rows.is_empty() {
        return Err(LcdError::InvalidInput("no rows to plot".into()));
    }
    let cells = summarize(rows);
    let mut methods: Vec<_> = cells.iter().map(|c| c.method).collect();
    methods.dedup();
    let qs: Vec<usize> = {
        let mut q: Vec<usize> = cells.iter().map(|c| c.q).collect();
        q.sort();
        q.dedup();
        q
    };
    let values: Vec<f64> = cells.iter().map(|c| metric.of(c)).collect();
    let axis = Axis::fit(&values);
    let pw = WIDTH - LEFT - RIGHT;
    let ph = HEIGHT - TOP - BOTTOM;
    let (qmin, qmax) = (qs[0] as f64, *qs.last().unwrap() as f64);
    let x = |q: usize| if qmax > qmin { LEFT + pw * (q as f64 - qmin) / (qmax - qmin) } else { LEFT + pw / 2.0 };
    let y = |v: f64| TOP + ph * (1.0 - axis.frac(v));

    let mut s = String::new();
    let _ = writeln!(
        s,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\" font-family=\"sans-serif\" font-size=\"12\">"
    );
    let _ = writeln!(s, "<rect width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"white\"/>");
    let _ = writeln!(s, "<rect x=\"{LEFT}\" y=\"{TOP}\" width=\"{pw}\" height=\"{ph}\" fill=\"none\" stroke=\"#444\"/>");
    for (v, label) in axis.ticks() {
        let ty = y(v);
        let _ = writeln!(s, "<line x1=\"{}\" y1=\"{ty:.2}\" x2=\"{LEFT}\" y2=\"{ty:.2}\" stroke=\"#444\"/>", LEFT - 5.0);
        let _ = writeln!(
            s,
            "<line x1=\"{LEFT}\" y1=\"{ty:.2}\" x2=\"{}\" y2=\"{ty:.2}\" stroke=\"#ddd\"/>",
            LEFT + pw
        );
        let _ = writeln!(s, "<text x=\"{}\" y=\"{:.2}\" text-anchor=\"end\">{label}</text>", LEFT - 8.0, ty + 4.0);
    }
    for &q in &qs {
        let tx = x(q);
        let _ = writeln!(s, "<line x1=\"{tx:.2}\" y1=\"{}\" x2=\"{tx:.2}\" y2=\"{}\" stroke=\"#444\"/>", TOP + ph, TOP + ph + 5.0);
        let _ = writeln!(s, "<text x=\"{tx:.2}\" y=\"{}\" text-anchor=\"middle\">{q}</text>", TOP + ph + 20.0);
    }
    let _ = writeln!(s, "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">q</text>", LEFT + pw / 2.0, HEIGHT - 15.0);
    let scale = if matches!(axis, Axis::Log { .. }) { " (log scale)" } else { "" };
    let _ = writeln!(
        s,
        "<text x=\"20\" y=\"{}\" text-anchor=\"middle\" transform=\"rotate(-90 20 {})\">median {}{scale}</text>",
        TOP + ph / 2.0,
        TOP + ph / 2.0,
        metric.column()
    );
    for (n, method) in methods.iter().enumerate() {
        let (color, dash) = STYLES[n % STYLES.len()];
        let dash_attr = if dash.is_empty() { String::new() } else { format!(" stroke-dasharray=\"{dash}\"") };
        let pts: Vec<String> = cells
            .iter()
            .filter(|c| c.method == *method)
            .map(|c| format!("{:.2},{:.2}", x(c.q), y(metric.of(c))))
            .collect();
        let _ = writeln!(
            s,
            "<polyline class=\"series\" data-method=\"{method}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"2\"{dash_attr} points=\"{}\"/>",
            pts.join(" ")
        );
        let ly = TOP + 20.0 * n as f64 + 10.0;
        let lx = LEFT + pw + 15.0;
        let _ = writeln!(
            s,
            "<line x1=\"{lx}\" y1=\"{ly}\" x2=\"{}\" y2=\"{ly}\" stroke=\"{color}\" stroke-width=\"2\"{dash_attr}/>",
            lx + 25.0
        );
        let _ = writeln!(s, "<text x=\"{}\" y=\"{}\">{method}</text>", lx + 30.0, ly + 4.0);
    }
    s.push_str("</svg>\n");
    Ok(s)
}
