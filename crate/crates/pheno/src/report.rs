//! Static SVG figures: per-cluster outcome distributions and mean
//! trajectories of one channel.

use std::fmt::Write as _;

use pheno_core::cohort::{Outcome, VitalChannel};
use pheno_core::eval::ClusterProfile;

const PALETTE: [&str; 8] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
];
const OUTCOME_LABELS: [&str; 4] = ["Discharge", "ICU", "Cardiac arrest", "Death"];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Profiles largest first, ties by cluster id.
pub fn ordered(profiles: &[ClusterProfile]) -> Vec<&ClusterProfile> {
    let mut v: Vec<&ClusterProfile> = profiles.iter().collect();
    v.sort_by(|a, b| b.size.cmp(&a.size).then(a.cluster.cmp(&b.cluster)));
    v
}

/// One bar panel per cluster, largest cluster first, titled with its size.
pub fn outcome_svg(profiles: &[ClusterProfile]) -> String {
    let (pw, ph, top, bottom, left) = (220.0, 240.0, 40.0, 60.0, 40.0);
    let n = profiles.len().max(1) as f64;
    let width = left + pw * n + 20.0;
    let height = top + ph + bottom;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    for (j, p) in ordered(profiles).into_iter().enumerate() {
        let x0 = left + pw * j as f64;
        let _ = writeln!(
            s,
            r#"<g class="panel" data-cluster="{}"><text x="{:.1}" y="20" text-anchor="middle" font-size="13">Cluster {} (n={})</text>"#,
            p.cluster,
            x0 + pw / 2.0,
            p.cluster,
            p.size
        );
        let _ = writeln!(
            s,
            r#"<line x1="{x0:.1}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="black"/>"#,
            top + ph,
            x0 + pw - 20.0,
            top + ph
        );
        let bw = (pw - 40.0) / Outcome::ALL.len() as f64;
        for (c, &v) in p.outcome_distribution.iter().enumerate() {
            let h = v * ph;
            let bx = x0 + 10.0 + bw * c as f64;
            let _ = writeln!(
                s,
                r#"<rect x="{bx:.1}" y="{:.1}" width="{:.1}" height="{h:.1}" fill="{}"><title>{}: {:.3}</title></rect>"#,
                top + ph - h,
                bw * 0.8,
                PALETTE[c],
                OUTCOME_LABELS[c],
                v
            );
            let _ = writeln!(
                s,
                r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{:.1}%</text>"#,
                bx + bw * 0.4,
                top + ph - h - 3.0,
                v * 100.0
            );
            let _ = writeln!(
                s,
                r#"<text x="{:.1}" y="{:.1}" text-anchor="end" transform="rotate(-35 {:.1} {:.1})">{}</text>"#,
                bx + bw * 0.4,
                top + ph + 14.0,
                bx + bw * 0.4,
                top + ph + 14.0,
                OUTCOME_LABELS[c]
            );
        }
        s.push_str("</g>\n");
    }
    s.push_str("</svg>\n");
    s
}

/// Mean trajectory of `channel` per cluster against hours to outcome, with
/// time running left to right (far from outcome on the left).
pub fn trajectory_svg(profiles: &[ClusterProfile], hours: &[f64], channel: VitalChannel) -> String {
    let (w, h, left, right, top, bottom) = (720.0, 400.0, 60.0, 180.0, 40.0, 50.0);
    let ch = channel.index();
    let ordered = ordered(profiles);
    let values: Vec<f64> = ordered.iter().flat_map(|p| p.mean_trajectory.col(ch)).collect();
    let (mut lo, mut hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        (lo, hi) = (0.0, 1.0);
    }
    if hi - lo < 1e-9 {
        (lo, hi) = (lo - 0.5, hi + 0.5);
    }
    let pad = 0.05 * (hi - lo);
    let (lo, hi) = (lo - pad, hi + pad);
    let (hmax, hmin) = hours
        .iter()
        .fold((f64::NEG_INFINITY, f64::INFINITY), |(a, b), &v| (a.max(v), b.min(v)));
    let span = (hmax - hmin).max(1e-9);
    let px = |hr: f64| left + (hmax - hr) / span * (w - left - right);
    let py = |v: f64| top + (hi - v) / (hi - lo) * (h - top - bottom);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="22" text-anchor="middle" font-size="14">{} mean trajectory per cluster ({})</text>"#,
        (w - right + left) / 2.0,
        channel.name(),
        escape(channel.unit())
    );
    let _ = writeln!(
        s,
        r#"<line x1="{left}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="black"/><line x1="{left}" y1="{top}" x2="{left}" y2="{:.1}" stroke="black"/>"#,
        h - bottom,
        w - right,
        h - bottom,
        h - bottom
    );
    for i in 0..=4 {
        let v = lo + (hi - lo) * i as f64 / 4.0;
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{v:.1}</text>"#,
            left - 6.0,
            py(v) + 4.0
        );
        let hr = hmax - span * i as f64 / 4.0;
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{hr:.0}</text>"#,
            px(hr),
            h - bottom + 16.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">hours to outcome</text>"#,
        (w - right + left) / 2.0,
        h - 10.0
    );
    for (j, p) in ordered.iter().enumerate() {
        let color = PALETTE[j % PALETTE.len()];
        let pts: Vec<String> = hours
            .iter()
            .zip(p.mean_trajectory.col(ch))
            .map(|(&hr, v)| format!("{:.1},{:.1}", px(hr), py(v)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline class="trajectory" data-cluster="{}" fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#,
            p.cluster,
            pts.join(" ")
        );
        let ly = top + 18.0 * j as f64;
        let _ = writeln!(
            s,
            r#"<line x1="{:.1}" y1="{ly:.1}" x2="{:.1}" y2="{ly:.1}" stroke="{color}" stroke-width="2"/><text x="{:.1}" y="{:.1}">Cluster {} (n={})</text>"#,
            w - right + 15.0,
            w - right + 35.0,
            w - right + 40.0,
            ly + 4.0,
            p.cluster,
            p.size
        );
    }
    s.push_str("</svg>\n");
    s
}
