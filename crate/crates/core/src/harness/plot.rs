use super::rates::{LevelStat, RateFit};

const W: f64 = 640.0;
const H: f64 = 480.0;
const MARGIN: f64 = 60.0;

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Log-log scatter of per-`N` means with interval bars, plus the fitted
/// line when given.
pub fn rates_svg(levels: &[LevelStat], fit: Option<&RateFit>, title: &str) -> String {
    let pts: Vec<&LevelStat> = levels.iter().filter(|l| l.mean > 0.0 && l.n > 0).collect();
    let mut svg = format!(
        "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\">\n"
    );
    svg.push_str(&format!("<rect width=\"{W}\" height=\"{H}\" fill=\"white\"/>\n"));
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"30\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"16\">{}</text>\n",
        W / 2.0,
        escape(title)
    ));
    if pts.is_empty() {
        svg.push_str("</svg>\n");
        return svg;
    }
    let lx: Vec<f64> = pts.iter().map(|l| (l.n as f64).ln()).collect();
    let lo_y = |l: &LevelStat| if l.ci_low > 0.0 { l.ci_low } else { l.mean };
    let ly: Vec<f64> = pts.iter().flat_map(|l| [lo_y(l).ln(), l.ci_high.max(l.mean).ln()]).collect();
    let span = |v: &[f64]| {
        let (a, b) = v.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
        if b - a < 1e-9 {
            (a - 0.5, b + 0.5)
        } else {
            let pad = 0.05 * (b - a);
            (a - pad, b + pad)
        }
    };
    let (x0, x1) = span(&lx);
    let (y0, y1) = span(&ly);
    let sx = |x: f64| MARGIN + (x - x0) / (x1 - x0) * (W - 2.0 * MARGIN);
    let sy = |y: f64| H - MARGIN - (y - y0) / (y1 - y0) * (H - 2.0 * MARGIN);
    svg.push_str(&format!(
        "<line x1=\"{MARGIN}\" y1=\"{b}\" x2=\"{r}\" y2=\"{b}\" stroke=\"black\"/>\n<line x1=\"{MARGIN}\" y1=\"{MARGIN}\" x2=\"{MARGIN}\" y2=\"{b}\" stroke=\"black\"/>\n",
        b = H - MARGIN,
        r = W - MARGIN
    ));
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">N (log)</text>\n",
        W / 2.0,
        H - 20.0
    ));
    svg.push_str(&format!(
        "<text x=\"20\" y=\"{}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\" transform=\"rotate(-90 20 {})\">mean suboptimality (log)</text>\n",
        H / 2.0,
        H / 2.0
    ));
    for l in &pts {
        let x = sx((l.n as f64).ln());
        svg.push_str(&format!(
            "<line x1=\"{x:.2}\" y1=\"{:.2}\" x2=\"{x:.2}\" y2=\"{:.2}\" stroke=\"gray\"/>\n",
            sy(lo_y(l).ln()),
            sy(l.ci_high.max(l.mean).ln())
        ));
        svg.push_str(&format!("<circle cx=\"{x:.2}\" cy=\"{:.2}\" r=\"4\" fill=\"steelblue\"/>\n", sy(l.mean.ln())));
        svg.push_str(&format!(
            "<text x=\"{x:.2}\" y=\"{}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"10\">{}</text>\n",
            H - MARGIN + 14.0,
            l.n
        ));
    }
    if let Some(f) = fit {
        let y = |x: f64| f.intercept + f.slope * x;
        svg.push_str(&format!(
            "<line x1=\"{:.2}\" y1=\"{:.2}\" x2=\"{:.2}\" y2=\"{:.2}\" stroke=\"firebrick\" stroke-dasharray=\"6 3\"/>\n",
            sx(x0),
            sy(y(x0)),
            sx(x1),
            sy(y(x1))
        ));
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"12\">slope {:.3}, R² {:.3}</text>\n",
            W - MARGIN,
            MARGIN,
            f.slope,
            f.r_squared
        ));
    }
    svg.push_str("</svg>\n");
    svg
}
