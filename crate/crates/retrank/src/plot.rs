//! Minimal SVG line charts for metric curves. No styling ambitions; just
//! enough to eyeball a run.

use crate::evaluation::MetricsReport;
use crate::experiment::SweepReport;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const MARGIN: f64 = 50.0;
const COLORS: [&str; 4] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];

/// A named polyline.
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

/// Render labelled series into a standalone SVG document.
pub fn line_chart(title: &str, x_label: &str, y_label: &str, series: &[Series]) -> String {
    let all: Vec<(f64, f64)> = series.iter().flat_map(|s| s.points.iter().copied()).collect();
    let (x_min, x_max) = bounds(all.iter().map(|p| p.0));
    let (y_min, y_max) = bounds(all.iter().map(|p| p.1));
    let sx = |x: f64| MARGIN + (x - x_min) / (x_max - x_min).max(1e-12) * (WIDTH - 2.0 * MARGIN);
    let sy = |y: f64| HEIGHT - MARGIN - (y - y_min) / (y_max - y_min).max(1e-12) * (HEIGHT - 2.0 * MARGIN);

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\">\n"
    ));
    svg.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"16\">{title}</text>\n",
        WIDTH / 2.0
    ));
    // Axes.
    svg.push_str(&format!(
        "<line x1=\"{m}\" y1=\"{b}\" x2=\"{r}\" y2=\"{b}\" stroke=\"black\"/>\n<line x1=\"{m}\" y1=\"{t}\" x2=\"{m}\" y2=\"{b}\" stroke=\"black\"/>\n",
        m = MARGIN,
        b = HEIGHT - MARGIN,
        r = WIDTH - MARGIN,
        t = MARGIN,
    ));
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">{x_label}</text>\n",
        WIDTH / 2.0,
        HEIGHT - 12.0
    ));
    svg.push_str(&format!(
        "<text x=\"14\" y=\"{y}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\" transform=\"rotate(-90 14 {y})\">{y_label}</text>\n",
        y = HEIGHT / 2.0
    ));
    // Range labels.
    svg.push_str(&format!(
        "<text x=\"{m}\" y=\"{b}\" font-family=\"sans-serif\" font-size=\"10\">{x_min:.3}</text>\n<text x=\"{r}\" y=\"{b}\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"10\">{x_max:.3}</text>\n<text x=\"{m2}\" y=\"{t}\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"10\">{y_max:.4}</text>\n<text x=\"{m2}\" y=\"{b2}\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"10\">{y_min:.4}</text>\n",
        m = MARGIN,
        m2 = MARGIN - 4.0,
        b = HEIGHT - MARGIN + 14.0,
        b2 = HEIGHT - MARGIN,
        r = WIDTH - MARGIN,
        t = MARGIN + 4.0,
    ));

    for (i, s) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let pts: Vec<String> = s
            .points
            .iter()
            .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
            .collect();
        svg.push_str(&format!(
            "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\" points=\"{}\"/>\n",
            pts.join(" ")
        ));
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\" fill=\"{color}\">{}</text>\n",
            WIDTH - MARGIN + 4.0,
            MARGIN + 14.0 * i as f64,
            s.label
        ));
    }
    svg.push_str("</svg>\n");
    svg
}

fn bounds(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for v in values {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if !lo.is_finite() || !hi.is_finite() {
        (0.0, 1.0)
    } else if lo == hi {
        (lo - 0.5, hi + 0.5)
    } else {
        (lo, hi)
    }
}

/// One line per prediction mode of `metric` against the epoch.
pub fn metric_over_epochs(metric: &str, reports: &[MetricsReport]) -> String {
    let pick = |r: &MetricsReport| match metric {
        "ndcg" => r.ndcg,
        "recall" => r.recall,
        _ => r.mrr,
    };
    let series: Vec<Series> = crate::evaluation::EvalMode::ALL
        .iter()
        .map(|&mode| Series {
            label: mode.as_str().to_string(),
            points: reports
                .iter()
                .filter(|r| r.mode == mode)
                .map(|r| (r.epoch as f64, pick(r)))
                .collect(),
        })
        .collect();
    line_chart(&format!("{metric} vs epoch"), "epoch", metric, &series)
}

/// Final NDCG per pipeline against the swept pool size.
pub fn metric_over_sweep(report: &SweepReport) -> String {
    let series: Vec<Series> = crate::evaluation::EvalMode::ALL
        .iter()
        .enumerate()
        .map(|(i, &mode)| Series {
            label: mode.as_str().to_string(),
            points: report
                .rows
                .iter()
                .map(|sr| (sr.value as f64, sr.rows[i].ndcg.mean))
                .collect(),
        })
        .collect();
    line_chart("ndcg vs pool size", &report.knob, "ndcg", &series)
}
