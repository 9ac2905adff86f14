//! Minimal self-contained SVG writer for log-log gap curves with dashed
//! bound overlays. No plotting dependency: figures are outputs, not an
//! interactive surface.

pub struct Series {
    pub name: String,
    pub dashed: bool,
    /// `(k, value)`; nonpositive or non-finite values are skipped (log axes).
    pub points: Vec<(f64, f64)>,
}

const WIDTH: f64 = 860.0;
const HEIGHT: f64 = 560.0;
const MARGIN_L: f64 = 70.0;
const MARGIN_R: f64 = 220.0;
const MARGIN_T: f64 = 40.0;
const MARGIN_B: f64 = 55.0;

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f",
];

fn log_points(s: &Series) -> Vec<(f64, f64)> {
    s.points
        .iter()
        .filter(|(k, v)| *k > 0.0 && v.is_finite() && *v > 0.0)
        .map(|(k, v)| (k.log10(), v.log10()))
        .collect()
}

/// Renders the figure; returns a complete SVG document.
pub fn render(title: &str, series: &[Series]) -> String {
    let usable: Vec<(&Series, Vec<(f64, f64)>)> = series
        .iter()
        .map(|s| (s, log_points(s)))
        .filter(|(_, pts)| !pts.is_empty())
        .collect();

    let mut out = String::new();
    out.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\">\n"
    ));
    out.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    out.push_str(&format!(
        "<text x=\"{}\" y=\"24\" font-family=\"sans-serif\" font-size=\"16\">{}</text>\n",
        MARGIN_L,
        xml_escape(title)
    ));

    if usable.is_empty() {
        out.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"14\">no positive values to plot</text>\n",
            MARGIN_L,
            HEIGHT / 2.0
        ));
        out.push_str("</svg>\n");
        return out;
    }

    let mut x_min = f64::INFINITY;
    let mut x_max = f64::NEG_INFINITY;
    let mut y_min = f64::INFINITY;
    let mut y_max = f64::NEG_INFINITY;
    for (_, pts) in &usable {
        for (x, y) in pts {
            x_min = x_min.min(*x);
            x_max = x_max.max(*x);
            y_min = y_min.min(*y);
            y_max = y_max.max(*y);
        }
    }
    if x_max - x_min < 1e-9 {
        x_max = x_min + 1.0;
    }
    if y_max - y_min < 1e-9 {
        y_max = y_min + 1.0;
    }
    let pad_y = 0.05 * (y_max - y_min);
    let (y_min, y_max) = (y_min - pad_y, y_max + pad_y);

    let plot_w = WIDTH - MARGIN_L - MARGIN_R;
    let plot_h = HEIGHT - MARGIN_T - MARGIN_B;
    let to_px = |x: f64, y: f64| {
        (
            MARGIN_L + (x - x_min) / (x_max - x_min) * plot_w,
            MARGIN_T + (y_max - y) / (y_max - y_min) * plot_h,
        )
    };

    // Frame.
    out.push_str(&format!(
        "<rect x=\"{MARGIN_L}\" y=\"{MARGIN_T}\" width=\"{plot_w}\" height=\"{plot_h}\" fill=\"none\" stroke=\"#333\"/>\n"
    ));

    // Decade gridlines and tick labels.
    let x_lo = x_min.ceil() as i64;
    let x_hi = x_max.floor() as i64;
    for e in x_lo..=x_hi {
        let (px, _) = to_px(e as f64, y_min);
        out.push_str(&format!(
            "<line x1=\"{px:.2}\" y1=\"{MARGIN_T}\" x2=\"{px:.2}\" y2=\"{:.2}\" stroke=\"#ddd\"/>\n",
            MARGIN_T + plot_h
        ));
        out.push_str(&format!(
            "<text x=\"{px:.2}\" y=\"{:.2}\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"middle\">1e{e}</text>\n",
            MARGIN_T + plot_h + 18.0
        ));
    }
    let y_lo = y_min.ceil() as i64;
    let y_hi = y_max.floor() as i64;
    for e in y_lo..=y_hi {
        let (_, py) = to_px(x_min, e as f64);
        out.push_str(&format!(
            "<line x1=\"{MARGIN_L}\" y1=\"{py:.2}\" x2=\"{:.2}\" y2=\"{py:.2}\" stroke=\"#ddd\"/>\n",
            MARGIN_L + plot_w
        ));
        out.push_str(&format!(
            "<text x=\"{:.2}\" y=\"{py:.2}\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"end\">1e{e}</text>\n",
            MARGIN_L - 6.0
        ));
    }
    out.push_str(&format!(
        "<text x=\"{:.2}\" y=\"{:.2}\" font-family=\"sans-serif\" font-size=\"13\" text-anchor=\"middle\">iteration k</text>\n",
        MARGIN_L + plot_w / 2.0,
        HEIGHT - 12.0
    ));

    // Curves.
    for (idx, (s, pts)) in usable.iter().enumerate() {
        let color = PALETTE[idx % PALETTE.len()];
        let dash = if s.dashed {
            " stroke-dasharray=\"6,4\""
        } else {
            ""
        };
        let mut path = String::new();
        for (i, (x, y)) in pts.iter().enumerate() {
            let (px, py) = to_px(*x, *y);
            path.push_str(&format!("{}{px:.2},{py:.2}", if i == 0 { "" } else { " " }));
        }
        out.push_str(&format!(
            "<polyline points=\"{path}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.6\"{dash}/>\n"
        ));
        // Legend entry.
        let ly = MARGIN_T + 16.0 + 18.0 * idx as f64;
        let lx = MARGIN_L + plot_w + 14.0;
        out.push_str(&format!(
            "<line x1=\"{lx}\" y1=\"{ly:.2}\" x2=\"{:.2}\" y2=\"{ly:.2}\" stroke=\"{color}\" stroke-width=\"1.6\"{dash}/>\n",
            lx + 24.0
        ));
        out.push_str(&format!(
            "<text x=\"{:.2}\" y=\"{:.2}\" font-family=\"sans-serif\" font-size=\"12\">{}</text>\n",
            lx + 30.0,
            ly + 4.0,
            xml_escape(&s.name)
        ));
    }

    out.push_str("</svg>\n");
    out
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}
