//! Plain-SVG figures: no plotting dependency, fixed number formatting so the
//! output is byte-stable.

use std::fmt::Write as _;

use super::{Dendrogram, SimilarityMatrix};
use crate::error::{Error, Result};

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf", "#8c564b", "#e377c2",
];

#[derive(Debug, Clone, PartialEq)]
pub struct DendrogramStyle {
    pub width: f64,
    /// Vertical space per leaf.
    pub row_height: f64,
    pub font_size: f64,
    /// Space reserved on the right for leaf labels.
    pub label_width: f64,
    /// Subtrees joined below this height are coloured as one cluster.
    pub cut_height: Option<f64>,
}

impl Default for DendrogramStyle {
    fn default() -> Self {
        Self {
            width: 640.0,
            row_height: 16.0,
            font_size: 11.0,
            label_width: 180.0,
            cut_height: None,
        }
    }
}

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

fn check_names<'a>(names: impl IntoIterator<Item = &'a String>) -> Result<()> {
    match names.into_iter().position(|n| n.trim().is_empty()) {
        Some(i) => Err(Error::EmptyName(i)),
        None => Ok(()),
    }
}

/// Horizontal dendrogram: root on the left, leaves and labels on the right.
pub fn render_dendrogram(d: &Dendrogram, style: &DendrogramStyle) -> Result<String> {
    check_names(d.names())?;
    let n = d.n_leaves();
    let margin = 10.0;
    let height = margin * 2.0 + style.row_height * n.max(1) as f64;
    let plot_w = (style.width - style.label_width - 2.0 * margin).max(10.0);
    let max_h = d.merges().iter().map(|m| m.height).fold(0.0, f64::max);
    let x_of = |h: f64| {
        if max_h > 0.0 {
            margin + plot_w * (1.0 - h / max_h)
        } else {
            margin + plot_w
        }
    };

    let order = d.leaf_order();
    let mut y = vec![0.0; 2 * n.max(1)];
    for (pos, &leaf) in order.iter().enumerate() {
        y[leaf] = margin + style.row_height * (pos as f64 + 0.5);
    }
    for (i, m) in d.merges().iter().enumerate() {
        y[n + i] = (y[m.left] + y[m.right]) / 2.0;
    }

    let colour_of_leaf: Vec<Option<&str>> = match style.cut_height {
        Some(h) => {
            let labels = d.cut_at_height(h);
            let mut sizes = vec![0usize; n];
            labels.iter().for_each(|&l| sizes[l] += 1);
            labels
                .iter()
                .map(|&l| (sizes[l] > 1).then(|| PALETTE[l % PALETTE.len()]))
                .collect()
        }
        None => vec![None; n],
    };
    // a merge takes its cluster's colour when it sits below the cut
    let mut node_colour: Vec<Option<&str>> = colour_of_leaf.clone();
    for m in d.merges() {
        let c = match (style.cut_height, node_colour[m.left], node_colour[m.right]) {
            (Some(h), Some(a), Some(b)) if m.height <= h && a == b => Some(a),
            _ => None,
        };
        node_colour.push(c);
    }

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{:.2}" height="{:.2}" viewBox="0 0 {:.2} {:.2}" font-family="sans-serif" font-size="{:.2}">"#,
        style.width, height, style.width, height, style.font_size
    );
    let _ = writeln!(svg, r#"<g class="links" fill="none" stroke-width="1.2">"#);
    for (i, m) in d.merges().iter().enumerate() {
        let xh = x_of(m.height);
        let colour = node_colour[n + i].unwrap_or("#555555");
        let _ = writeln!(
            svg,
            r#"<path class="link" stroke="{colour}" d="M{:.2},{:.2} H{:.2} V{:.2} H{:.2}"/>"#,
            x_of(d.height(m.left)),
            y[m.left],
            xh,
            y[m.right],
            x_of(d.height(m.right)),
        );
    }
    svg.push_str("</g>\n<g class=\"leaves\">\n");
    for &leaf in &order {
        let _ = writeln!(
            svg,
            r#"<text class="leaf" x="{:.2}" y="{:.2}" dominant-baseline="middle" fill="{}">{}</text>"#,
            margin + plot_w + 4.0,
            y[leaf],
            colour_of_leaf[leaf].unwrap_or("#000000"),
            escape(&d.names()[leaf])
        );
    }
    svg.push_str("</g>\n</svg>\n");
    Ok(svg)
}

/// Blue (-1) through white (0) to red (+1).
fn diverging(v: f64) -> String {
    let t = v.clamp(-1.0, 1.0);
    let (r, g, b) = if t < 0.0 {
        let s = -t;
        (1.0 - 0.8 * s, 1.0 - 0.6 * s, 1.0)
    } else {
        (1.0, 1.0 - 0.8 * t, 1.0 - 0.8 * t)
    };
    let c = |x: f64| (x * 255.0).round() as u8;
    format!("#{:02x}{:02x}{:02x}", c(r), c(g), c(b))
}

/// One `rect` per cell, row labels on the left and column labels on top.
pub fn render_heatmap(m: &SimilarityMatrix) -> Result<String> {
    check_names(&m.row_names)?;
    check_names(&m.col_names)?;
    let cell = 14.0;
    let left = 160.0;
    let top = 160.0;
    let (rows, cols) = m.values.dim();
    let width = left + cell * cols as f64 + 10.0;
    let height = top + cell * rows as f64 + 10.0;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.2}" height="{height:.2}" viewBox="0 0 {width:.2} {height:.2}" font-family="sans-serif" font-size="10.00">"#
    );
    svg.push_str("<g class=\"cells\">\n");
    for ((i, j), v) in m.values.indexed_iter() {
        let _ = writeln!(
            svg,
            r#"<rect class="cell" x="{:.2}" y="{:.2}" width="{cell:.2}" height="{cell:.2}" fill="{}"><title>{} / {}: {v:.4}</title></rect>"#,
            left + cell * j as f64,
            top + cell * i as f64,
            diverging(*v),
            escape(&m.row_names[i]),
            escape(&m.col_names[j]),
        );
    }
    svg.push_str("</g>\n<g class=\"row-labels\" text-anchor=\"end\">\n");
    for (i, name) in m.row_names.iter().enumerate() {
        let _ = writeln!(
            svg,
            r#"<text class="row-label" x="{:.2}" y="{:.2}" dominant-baseline="middle">{}</text>"#,
            left - 4.0,
            top + cell * (i as f64 + 0.5),
            escape(name)
        );
    }
    svg.push_str("</g>\n<g class=\"col-labels\">\n");
    for (j, name) in m.col_names.iter().enumerate() {
        let x = left + cell * (j as f64 + 0.5);
        let _ = writeln!(
            svg,
            r#"<text class="col-label" transform="translate({x:.2},{:.2}) rotate(-90)" dominant-baseline="middle">{}</text>"#,
            top - 4.0,
            escape(name)
        );
    }
    svg.push_str("</g>\n</svg>\n");
    Ok(svg)
}
