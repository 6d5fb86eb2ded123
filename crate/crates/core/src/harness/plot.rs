use std::fmt::Write;

use super::table::ResultTable;

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 460.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 200.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;
const COLORS: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// NMSE (log scale) against SNR, one polyline per algorithm, size and p.
pub fn render_svg(table: &ResultTable, title: &str) -> String {
    let series = table.series();
    let points: Vec<(f64, f64)> = table
        .rows()
        .iter()
        .filter(|r| r.nmse_mean > 0.0 && r.nmse_mean.is_finite())
        .map(|r| (r.snr_db, r.nmse_mean))
        .collect();

    let (mut x0, mut x1) = points.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| (lo.min(p.0), hi.max(p.0)));
    let (mut d0, mut d1) = points
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| (lo.min(p.1.log10()), hi.max(p.1.log10())));
    if points.is_empty() {
        (x0, x1, d0, d1) = (0.0, 1.0, -1.0, 0.0);
    }
    if x1 <= x0 {
        x1 = x0 + 1.0;
    }
    let (d0, d1) = (d0.floor() as i32, (d1.ceil() as i32).max(d0.floor() as i32 + 1));

    let plot_w = WIDTH - LEFT - RIGHT;
    let plot_h = HEIGHT - TOP - BOTTOM;
    let px = |x: f64| LEFT + (x - x0) / (x1 - x0) * plot_w;
    let py = |y: f64| TOP + (d1 as f64 - y.log10()) / (d1 - d0) as f64 * plot_h;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(svg, r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#, LEFT + plot_w / 2.0, escape(title));

    for d in d0..=d1 {
        let y = py(10f64.powi(d));
        let _ = writeln!(svg, r##"<line x1="{LEFT}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#ddd"/>"##, LEFT + plot_w);
        let _ = writeln!(svg, r#"<text x="{:.2}" y="{:.2}" text-anchor="end">1e{d}</text>"#, LEFT - 6.0, y + 4.0);
    }
    let mut snrs: Vec<f64> = points.iter().map(|p| p.0).collect();
    snrs.sort_by(f64::total_cmp);
    snrs.dedup();
    for s in &snrs {
        let x = px(*s);
        let _ = writeln!(svg, r##"<line x1="{x:.2}" y1="{TOP}" x2="{x:.2}" y2="{:.2}" stroke="#eee"/>"##, TOP + plot_h);
        let _ = writeln!(svg, r#"<text x="{x:.2}" y="{:.2}" text-anchor="middle">{s}</text>"#, TOP + plot_h + 16.0);
    }
    let _ = writeln!(svg, r#"<rect x="{LEFT}" y="{TOP}" width="{plot_w}" height="{plot_h}" fill="none" stroke="black"/>"#);
    let _ = writeln!(svg, r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">SNR (dB)</text>"#, LEFT + plot_w / 2.0, HEIGHT - 10.0);
    let _ = writeln!(
        svg,
        r#"<text x="16" y="{:.2}" text-anchor="middle" transform="rotate(-90 16 {:.2})">NMSE</text>"#,
        TOP + plot_h / 2.0,
        TOP + plot_h / 2.0
    );

    for (k, (alg, size, p, rows)) in series.iter().enumerate() {
        let color = COLORS[k % COLORS.len()];
        let coords: Vec<String> = rows
            .iter()
            .filter(|r| r.nmse_mean > 0.0 && r.nmse_mean.is_finite())
            .map(|r| format!("{:.2},{:.2}", px(r.snr_db), py(r.nmse_mean)))
            .collect();
        let _ = writeln!(svg, r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#, coords.join(" "));
        for c in &coords {
            let (x, y) = c.split_once(',').expect("formatted pair");
            let _ = writeln!(svg, r#"<circle cx="{x}" cy="{y}" r="3" fill="{color}"/>"#);
        }
        let ly = TOP + 10.0 + 18.0 * k as f64;
        let lx = LEFT + plot_w + 12.0;
        let _ = writeln!(svg, r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/>"#, lx + 20.0);
        let label = if *p > 0.0 { format!("{alg} {}x{} p={p}", size[0], size[1]) } else { format!("{alg} {}x{}", size[0], size[1]) };
        let _ = writeln!(svg, r#"<text x="{}" y="{}">{}</text>"#, lx + 26.0, ly + 4.0, escape(&label));
    }
    svg.push_str("</svg>\n");
    svg
}
