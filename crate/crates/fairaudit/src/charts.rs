//! Deterministic, dependency-free SVG charts. Every data mark carries
//! machine-readable `data-*` attributes with the exact underlying values so
//! reports can be verified without re-parsing pixels.

use crate::consensus::ConsensusMatrix;
use crate::stats::{AuditVerdict, SalienceReport, EFFECT_SIZE_FLOOR};

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 480.0;
const MARGIN: f64 = 60.0;

/// Smallest p-value used for -log10 display scaling.
const P_FLOOR: f64 = 1e-300;

fn svg_open(title: &str) -> String {
    format!(
        concat!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 {w} {h}\" ",
            "font-family=\"sans-serif\" font-size=\"12\">\n",
            "<rect width=\"{w}\" height=\"{h}\" fill=\"white\"/>\n",
            "<text x=\"{cx}\" y=\"24\" text-anchor=\"middle\" font-size=\"16\">{title}</text>\n"
        ),
        w = WIDTH,
        h = HEIGHT,
        cx = WIDTH / 2.0,
        title = escape(title)
    )
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Fixed-width chart shown when a stage produced nothing to plot.
pub fn placeholder_chart(title: &str, message: &str) -> String {
    let mut out = svg_open(title);
    out.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" fill=\"#888\" data-empty=\"true\">{}</text>\n</svg>\n",
        WIDTH / 2.0,
        HEIGHT / 2.0,
        escape(message)
    ));
    out
}

/// Effect size vs. significance for every coefficient in a salience report.
/// Guide lines mark the +/- effect-size floor and the Bonferroni-adjusted
/// significance level. Passing terms are labeled, plus up to five of the
/// strongest non-passing terms for context.
pub fn volcano_chart(report: &SalienceReport) -> String {
    if report.terms.is_empty() {
        return placeholder_chart(
            &format!("Salient terms: {}", report.axis.name()),
            "no coefficients to plot",
        );
    }
    let max_abs_beta = report
        .terms
        .iter()
        .map(|t| t.beta.abs())
        .fold(EFFECT_SIZE_FLOOR * 1.5, f64::max);
    let max_logp = report
        .terms
        .iter()
        .map(|t| -(t.p_value.max(P_FLOOR)).log10())
        .fold(-(report.alpha_per_test.log10()) * 1.2, f64::max);

    let x_of = |beta: f64| MARGIN + (beta + max_abs_beta) / (2.0 * max_abs_beta) * (WIDTH - 2.0 * MARGIN);
    let y_of = |logp: f64| HEIGHT - MARGIN - logp / max_logp * (HEIGHT - 2.0 * MARGIN);

    let mut out = svg_open(&format!("Salient terms: {}", report.axis.name()));
    // Axes.
    out.push_str(&format!(
        "<line x1=\"{m}\" y1=\"{b}\" x2=\"{r}\" y2=\"{b}\" stroke=\"black\"/>\n<line x1=\"{m}\" y1=\"{t}\" x2=\"{m}\" y2=\"{b}\" stroke=\"black\"/>\n",
        m = MARGIN, b = HEIGHT - MARGIN, r = WIDTH - MARGIN, t = MARGIN
    ));
    out.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">coefficient</text>\n",
        WIDTH / 2.0,
        HEIGHT - 18.0
    ));
    out.push_str(&format!(
        "<text x=\"18\" y=\"{}\" transform=\"rotate(-90 18 {})\" text-anchor=\"middle\">-log10 p</text>\n",
        HEIGHT / 2.0,
        HEIGHT / 2.0
    ));
    // Guides: effect-size floor and adjusted alpha.
    for sign in [-1.0, 1.0] {
        out.push_str(&format!(
            "<line x1=\"{x:.2}\" y1=\"{t}\" x2=\"{x:.2}\" y2=\"{b}\" stroke=\"#c44\" stroke-dasharray=\"4 3\" data-guide=\"effect\" data-value=\"{v}\"/>\n",
            x = x_of(sign * EFFECT_SIZE_FLOOR),
            t = MARGIN,
            b = HEIGHT - MARGIN,
            v = sign * EFFECT_SIZE_FLOOR
        ));
    }
    let alpha_logp = -report.alpha_per_test.log10();
    out.push_str(&format!(
        "<line x1=\"{m}\" y1=\"{y:.2}\" x2=\"{r}\" y2=\"{y:.2}\" stroke=\"#46a\" stroke-dasharray=\"4 3\" data-guide=\"alpha\" data-value=\"{v}\"/>\n",
        m = MARGIN,
        r = WIDTH - MARGIN,
        y = y_of(alpha_logp),
        v = report.alpha_per_test
    ));

    // Points; label passers plus the five strongest near-misses.
    let mut near_misses = 0usize;
    for term in &report.terms {
        let logp = -(term.p_value.max(P_FLOOR)).log10();
        let (x, y) = (x_of(term.beta), y_of(logp));
        let color = if term.passes { "#c22" } else { "#999" };
        out.push_str(&format!(
            "<circle cx=\"{x:.2}\" cy=\"{y:.2}\" r=\"3\" fill=\"{color}\" data-term=\"{term_name}\" data-class=\"{class}\" data-beta=\"{beta}\" data-p=\"{p}\" data-passes=\"{passes}\"/>\n",
            term_name = escape(&term.term),
            class = escape(&term.class_label),
            beta = term.beta,
            p = term.p_value,
            passes = term.passes
        ));
        let label = if term.passes {
            true
        } else if near_misses < 5 && term.beta.abs() >= EFFECT_SIZE_FLOOR * 0.5 {
            near_misses += 1;
            true
        } else {
            false
        };
        if label {
            out.push_str(&format!(
                "<text x=\"{:.2}\" y=\"{:.2}\" font-size=\"10\" fill=\"{color}\">{}</text>\n",
                x + 4.0,
                y - 4.0,
                escape(&term.term)
            ));
        }
    }
    out.push_str("</svg>\n");
    out
}

/// Term-by-model heatmap of row-normalized consensus strengths.
pub fn heatmap_chart(matrix: &ConsensusMatrix) -> String {
    if matrix.empty {
        return placeholder_chart("Cross-model consensus", "no term is salient in two or more models");
    }
    let mut out = svg_open("Cross-model consensus");
    let rows = matrix.terms.len();
    let cols = matrix.models.len();
    let cell_w = ((WIDTH - 2.0 * MARGIN - 80.0) / cols as f64).min(80.0);
    let cell_h = ((HEIGHT - 2.0 * MARGIN) / rows as f64).min(28.0);
    let x0 = MARGIN + 80.0;
    let y0 = MARGIN;
    for (c, model) in matrix.models.iter().enumerate() {
        out.push_str(&format!(
            "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\" font-size=\"11\">{}</text>\n",
            x0 + (c as f64 + 0.5) * cell_w,
            y0 - 8.0,
            escape(model)
        ));
    }
    for (r, term) in matrix.terms.iter().enumerate() {
        out.push_str(&format!(
            "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"end\" font-size=\"11\">{}</text>\n",
            x0 - 6.0,
            y0 + (r as f64 + 0.65) * cell_h,
            escape(term)
        ));
        for c in 0..cols {
            let v = matrix.normalized[r][c];
            let shade = (255.0 - v * 180.0).round() as u8;
            out.push_str(&format!(
                "<rect x=\"{x:.2}\" y=\"{y:.2}\" width=\"{w:.2}\" height=\"{h:.2}\" fill=\"rgb({s},{s},255)\" stroke=\"#ccc\" data-term=\"{term_name}\" data-model=\"{model}\" data-value=\"{raw}\" data-normalized=\"{norm}\"/>\n",
                x = x0 + c as f64 * cell_w,
                y = y0 + r as f64 * cell_h,
                w = cell_w,
                h = cell_h,
                s = shade,
                term_name = escape(term),
                model = escape(&matrix.models[c]),
                raw = matrix.values[r][c],
                norm = v
            ));
        }
    }
    out.push_str("</svg>\n");
    out
}

/// Radar/spider chart over a small set of labeled spokes. `values` and
/// `labels` must have equal lengths; values are scaled by the max spoke.
pub fn radar_chart(title: &str, labels: &[String], values: &[f64]) -> String {
    if labels.is_empty() || labels.len() != values.len() {
        return placeholder_chart(title, "no spokes to plot");
    }
    let cx = WIDTH / 2.0;
    let cy = HEIGHT / 2.0 + 10.0;
    let radius = (HEIGHT / 2.0) - MARGIN - 10.0;
    let max_v = values.iter().cloned().fold(f64::MIN_POSITIVE, f64::max);
    let n = labels.len();
    let point = |i: usize, v: f64| -> (f64, f64) {
        let angle = std::f64::consts::TAU * i as f64 / n as f64 - std::f64::consts::FRAC_PI_2;
        let r = radius * (v / max_v).clamp(0.0, 1.0);
        (cx + r * angle.cos(), cy + r * angle.sin())
    };
    let mut out = svg_open(title);
    // Spokes and labels.
    for (i, label) in labels.iter().enumerate() {
        let (sx, sy) = point(i, max_v);
        out.push_str(&format!(
            "<line x1=\"{cx:.2}\" y1=\"{cy:.2}\" x2=\"{sx:.2}\" y2=\"{sy:.2}\" stroke=\"#ddd\"/>\n"
        ));
        let (lx, ly) = {
            let angle = std::f64::consts::TAU * i as f64 / n as f64 - std::f64::consts::FRAC_PI_2;
            (cx + (radius + 18.0) * angle.cos(), cy + (radius + 18.0) * angle.sin())
        };
        out.push_str(&format!(
            "<text x=\"{lx:.2}\" y=\"{ly:.2}\" text-anchor=\"middle\" font-size=\"11\">{}</text>\n",
            escape(label)
        ));
    }
    // Polygon through the data points.
    let coords: Vec<String> = values
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let (x, y) = point(i, v);
            format!("{x:.2},{y:.2}")
        })
        .collect();
    out.push_str(&format!(
        "<polygon points=\"{}\" fill=\"rgba(70,100,180,0.25)\" stroke=\"#46a\"/>\n",
        coords.join(" ")
    ));
    for (i, (&v, label)) in values.iter().zip(labels.iter()).enumerate() {
        let (x, y) = point(i, v);
        out.push_str(&format!(
            "<circle cx=\"{x:.2}\" cy=\"{y:.2}\" r=\"3\" fill=\"#46a\" data-label=\"{}\" data-value=\"{v}\"/>\n",
            escape(label)
        ));
    }
    out.push_str("</svg>\n");
    out
}

/// Accuracy margin over chance per (axis, classifier), with the Bonferroni
/// verdict encoded in the bar color.
pub fn margin_chart(verdicts: &[AuditVerdict]) -> String {
    if verdicts.is_empty() {
        return placeholder_chart("Leakage margins", "no audit verdicts");
    }
    let mut out = svg_open("Leakage margins over chance");
    let n = verdicts.len();
    let band = (WIDTH - 2.0 * MARGIN) / n as f64;
    let max_margin = verdicts
        .iter()
        .map(|v| (v.mean_accuracy - v.chance_level).abs())
        .fold(0.1f64, f64::max);
    let zero_y = HEIGHT / 2.0;
    let scale = (HEIGHT / 2.0 - MARGIN) / max_margin;
    out.push_str(&format!(
        "<line x1=\"{m}\" y1=\"{zero_y:.2}\" x2=\"{r}\" y2=\"{zero_y:.2}\" stroke=\"black\"/>\n",
        m = MARGIN,
        r = WIDTH - MARGIN
    ));
    for (i, v) in verdicts.iter().enumerate() {
        let margin = v.mean_accuracy - v.chance_level;
        let h = margin.abs() * scale;
        let x = MARGIN + i as f64 * band + band * 0.15;
        let y = if margin >= 0.0 { zero_y - h } else { zero_y };
        let color = if v.leakage_detected { "#c22" } else { "#7a7" };
        out.push_str(&format!(
            "<rect x=\"{x:.2}\" y=\"{y:.2}\" width=\"{w:.2}\" height=\"{h:.2}\" fill=\"{color}\" data-axis=\"{axis}\" data-classifier=\"{clf}\" data-mean-accuracy=\"{acc}\" data-chance=\"{chance}\" data-margin=\"{margin}\" data-p=\"{p}\" data-leakage=\"{leak}\"/>\n",
            w = band * 0.7,
            h = h.max(0.5),
            axis = v.axis.name(),
            clf = v.classifier.name(),
            acc = v.mean_accuracy,
            chance = v.chance_level,
            p = v.p_value,
            leak = v.leakage_detected
        ));
        out.push_str(&format!(
            "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\" font-size=\"10\">{}/{}</text>\n",
            x + band * 0.35,
            HEIGHT - MARGIN + 16.0,
            v.axis.name(),
            v.classifier.name()
        ));
    }
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Axis;
    use crate::stats::SalientTerm;

    fn sample_report() -> SalienceReport {
        SalienceReport {
            axis: Axis::Sex,
            reference: "female".into(),
            terms: vec![
                SalientTerm {
                    term: "dear".into(),
                    class_label: "male".into(),
                    beta: -0.736,
                    std_err: 0.05,
                    p_value: 1e-12,
                    passes: true,
                },
                SalientTerm {
                    term: "thanks".into(),
                    class_label: "male".into(),
                    beta: 0.2,
                    std_err: 0.3,
                    p_value: 0.4,
                    passes: false,
                },
            ],
            comparisons: 120,
            alpha_per_test: 0.05 / 120.0,
            quasi_separated: false,
            converged: true,
            vocabulary: vec!["dear".into(), "thanks".into()],
        }
    }

    #[test]
    fn volcano_embeds_exact_values() {
        let svg = volcano_chart(&sample_report());
        assert!(svg.contains("data-term=\"dear\""));
        assert!(svg.contains("data-beta=\"-0.736\""));
        assert!(svg.contains("data-p=\"0.000000000001\"") || svg.contains("data-p=\"1e-12\""));
        assert!(svg.contains("data-guide=\"effect\""));
    }

    #[test]
    fn radar_embeds_display_formatted_values() {
        let labels: Vec<String> = ["Alumni", "Faculty", "Graduate", "Staff", "Outside"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let svg = radar_chart("Mean words", &labels, &[53.6, 61.2, 58.0, 49.9, 44.25]);
        assert!(svg.contains("data-value=\"53.6\""));
        assert!(svg.contains("data-value=\"44.25\""));
        assert!(svg.contains("data-label=\"Faculty\""));
    }

    #[test]
    fn charts_are_deterministic() {
        let report = sample_report();
        assert_eq!(volcano_chart(&report), volcano_chart(&report));
    }

    #[test]
    fn placeholder_for_empty_inputs() {
        let svg = radar_chart("empty", &[], &[]);
        assert!(svg.contains("data-empty=\"true\""));
        let empty = ConsensusMatrix {
            terms: vec![],
            models: vec!["a".into()],
            values: vec![],
            normalized: vec![],
            empty: true,
        };
        assert!(heatmap_chart(&empty).contains("data-empty=\"true\""));
    }

    #[test]
    fn svg_escapes_markup() {
        assert_eq!(escape("a<b&\"c\""), "a&lt;b&amp;&quot;c&quot;");
    }
}
