//! Minimal SVG line plots for accuracy curves. No styling knobs: one
//! series per example length, categorical x axis over the n grid.

use ginc_core::bayes::EvalResult;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const MARGIN_LEFT: f64 = 60.0;
const MARGIN_RIGHT: f64 = 110.0;
const MARGIN_TOP: f64 = 30.0;
const MARGIN_BOTTOM: f64 = 50.0;

const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

/// Render accuracy-vs-n curves, one polyline per example length.
pub fn accuracy_curves(title: &str, rows: &[EvalResult]) -> String {
    let mut ks: Vec<usize> = rows.iter().map(|r| r.k).collect();
    ks.sort_unstable();
    ks.dedup();
    let mut ns: Vec<usize> = rows.iter().map(|r| r.n).collect();
    ns.sort_unstable();
    ns.dedup();

    let plot_w = WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
    let plot_h = HEIGHT - MARGIN_TOP - MARGIN_BOTTOM;
    let x_of = |slot: usize| {
        MARGIN_LEFT
            + if ns.len() > 1 {
                plot_w * slot as f64 / (ns.len() - 1) as f64
            } else {
                plot_w / 2.0
            }
    };
    let y_of = |acc: f64| MARGIN_TOP + plot_h * (1.0 - acc);

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" \
         viewBox=\"0 0 {WIDTH} {HEIGHT}\">\n"
    ));
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"18\" font-family=\"sans-serif\" font-size=\"14\">{title}</text>\n",
        MARGIN_LEFT
    ));

    // Axes and horizontal grid lines at 0, 0.25, ..., 1.
    for i in 0..=4 {
        let acc = i as f64 / 4.0;
        let y = y_of(acc);
        svg.push_str(&format!(
            "<line x1=\"{MARGIN_LEFT}\" y1=\"{y:.1}\" x2=\"{:.1}\" y2=\"{y:.1}\" \
             stroke=\"#dddddd\"/>\n",
            MARGIN_LEFT + plot_w
        ));
        svg.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"11\" \
             text-anchor=\"end\">{acc:.2}</text>\n",
            MARGIN_LEFT - 6.0,
            y + 4.0
        ));
    }
    for (slot, &n) in ns.iter().enumerate() {
        let x = x_of(slot);
        svg.push_str(&format!(
            "<text x=\"{x:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"11\" \
             text-anchor=\"middle\">{n}</text>\n",
            MARGIN_TOP + plot_h + 18.0
        ));
    }
    svg.push_str(&format!(
        "<text x=\"{:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"12\" \
         text-anchor=\"middle\">examples in prompt</text>\n",
        MARGIN_LEFT + plot_w / 2.0,
        HEIGHT - 12.0
    ));
    svg.push_str(&format!(
        "<line x1=\"{MARGIN_LEFT}\" y1=\"{MARGIN_TOP}\" x2=\"{MARGIN_LEFT}\" y2=\"{:.1}\" \
         stroke=\"#333333\"/>\n",
        MARGIN_TOP + plot_h
    ));
    svg.push_str(&format!(
        "<line x1=\"{MARGIN_LEFT}\" y1=\"{:.1}\" x2=\"{:.1}\" y2=\"{:.1}\" stroke=\"#333333\"/>\n",
        MARGIN_TOP + plot_h,
        MARGIN_LEFT + plot_w,
        MARGIN_TOP + plot_h
    ));

    for (series, &k) in ks.iter().enumerate() {
        let color = COLORS[series % COLORS.len()];
        let mut points = Vec::new();
        for (slot, &n) in ns.iter().enumerate() {
            if let Some(row) = rows.iter().find(|r| r.k == k && r.n == n) {
                points.push(format!("{:.1},{:.1}", x_of(slot), y_of(row.accuracy)));
            }
        }
        svg.push_str(&format!(
            "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.8\" points=\"{}\"/>\n",
            points.join(" ")
        ));
        let legend_y = MARGIN_TOP + 16.0 * series as f64 + 10.0;
        svg.push_str(&format!(
            "<line x1=\"{:.1}\" y1=\"{legend_y:.1}\" x2=\"{:.1}\" y2=\"{legend_y:.1}\" \
             stroke=\"{color}\" stroke-width=\"1.8\"/>\n",
            MARGIN_LEFT + plot_w + 10.0,
            MARGIN_LEFT + plot_w + 30.0
        ));
        svg.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"11\">k={k}</text>\n",
            MARGIN_LEFT + plot_w + 36.0,
            legend_y + 4.0
        ));
    }

    svg.push_str("</svg>\n");
    svg
}
