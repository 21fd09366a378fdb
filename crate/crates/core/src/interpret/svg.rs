use std::fmt::Write;

use super::explanation::{Explanation, Technique};

const CHAR_WIDTH: f64 = 8.5;
const LINE_HEIGHT: f64 = 26.0;
const MAX_WIDTH: f64 = 720.0;
const PAD: f64 = 6.0;

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            c => out.push(c),
        }
    }
    out
}

/// Renders the tokens as wrapped text with a background shaded by weight: red for
/// positive, blue for negative, opacity proportional to `|w| / max |w|`.
pub fn heatmap_svg(e: &Explanation) -> String {
    let max = e.weights.iter().fold(0.0f64, |m, w| m.max(w.abs()));
    let mut body = String::new();
    let (mut x, mut y) = (PAD, PAD);
    for (tok, &w) in e.tokens.iter().zip(&e.weights) {
        let width = tok.chars().count() as f64 * CHAR_WIDTH + 2.0 * PAD;
        if x + width > MAX_WIDTH && x > PAD {
            x = PAD;
            y += LINE_HEIGHT;
        }
        let alpha = if max > 0.0 { w.abs() / max } else { 0.0 };
        let colour = if w >= 0.0 { "#d62728" } else { "#1f77b4" };
        let _ = writeln!(
            body,
            r#"<rect x="{x:.1}" y="{y:.1}" width="{width:.1}" height="{h:.1}" fill="{colour}" fill-opacity="{alpha:.4}"><title>{w:.6}</title></rect>"#,
            h = LINE_HEIGHT - 4.0
        );
        let _ = writeln!(
            body,
            r#"<text x="{tx:.1}" y="{ty:.1}">{t}</text>"#,
            tx = x + PAD,
            ty = y + LINE_HEIGHT - 10.0,
            t = escape(tok)
        );
        x += width + 2.0;
    }
    let title = match e.technique {
        Technique::Lime => "lime",
        Technique::Saliency => "saliency",
    };
    format!(
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h:.1}" font-family="monospace" font-size="14">
<desc>{title} explanation for output {c}</desc>
{body}</svg>
"#,
        w = MAX_WIDTH,
        h = y + LINE_HEIGHT + PAD,
        c = e.target_class
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn escapes_and_shades() {
        let e = Explanation {
            technique: Technique::Lime,
            tokens: vec!["<b>".into(), "bus".into()],
            weights: vec![-0.5, 1.0],
            target_class: 1,
            probabilities: vec![0.2, 0.8],
            features: vec![],
            intercept: None,
        };
        let svg = heatmap_svg(&e);
        assert!(svg.contains("&lt;b&gt;"));
        assert!(svg.contains(r##"fill="#1f77b4" fill-opacity="0.5000""##));
        assert!(svg.contains(r##"fill="#d62728" fill-opacity="1.0000""##));
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
    }
}
