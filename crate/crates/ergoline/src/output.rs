//! CSV, JSON and SVG writers. Every file starts with the tool version and
//! the SHA-256 of the config it came from.

use std::fmt::Write as _;
use std::io;
use std::path::Path;

use ergoline_core::estimate::BoundReport;
use serde::Serialize;

use crate::run::{BoundCurve, Histogram};

pub const TOOL: &str = concat!("ergoline ", env!("CARGO_PKG_VERSION"));

/// Provenance of an output file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Stamp {
    pub tool: String,
    pub config_sha256: String,
    pub seed: Option<u64>,
}

impl Stamp {
    pub fn new(config_sha256: &str, seed: Option<u64>) -> Self {
        Self { tool: TOOL.to_string(), config_sha256: config_sha256.to_string(), seed }
    }

    fn csv_header(&self) -> String {
        let mut s = format!("# {}\n# config-sha256 {}\n", self.tool, self.config_sha256);
        if let Some(seed) = self.seed {
            let _ = writeln!(s, "# seed {seed}");
        }
        s
    }
}

/// Shortest round-trip decimal; infinities as "+inf" / "-inf".
pub fn fmt_f64(x: f64) -> String {
    if x == f64::INFINITY {
        "+inf".into()
    } else if x == f64::NEG_INFINITY {
        "-inf".into()
    } else if x.is_nan() {
        "nan".into()
    } else {
        format!("{x}")
    }
}

pub fn bound_csv(stamp: &Stamp, curve: &BoundCurve) -> String {
    let mut s = stamp.csv_header();
    s.push_str("t,bound\n");
    for &(t, b) in &curve.rows {
        let _ = writeln!(s, "{},{}", fmt_f64(t), fmt_f64(b));
    }
    s
}

pub fn verify_csv(stamp: &Stamp, report: &BoundReport) -> String {
    let mut s = stamp.csv_header();
    s.push_str("t,empirical,ci_lo,ci_hi,bound,pass\n");
    for r in &report.rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            fmt_f64(r.t),
            fmt_f64(r.empirical.estimate),
            fmt_f64(r.empirical.ci_lo),
            fmt_f64(r.empirical.ci_hi),
            fmt_f64(r.bound),
            r.pass
        );
    }
    s
}

pub fn histogram_csv(stamp: &Stamp, h: &Histogram) -> String {
    let mut s = stamp.csv_header();
    s.push_str("bin_lo,bin_hi,count,density\n");
    for (i, &c) in h.counts.iter().enumerate() {
        let lo = h.lo + i as f64 * h.width;
        let density = if h.total > 0 { c as f64 / (h.total as f64 * h.width) } else { 0.0 };
        let _ = writeln!(s, "{},{},{},{}", fmt_f64(lo), fmt_f64(lo + h.width), c, fmt_f64(density));
    }
    s
}

#[derive(Serialize)]
struct Stamped<'a, T: Serialize> {
    #[serde(flatten)]
    stamp: &'a Stamp,
    result: &'a T,
}

/// Pretty JSON with the stamp fields merged in at the top level.
/// Non-finite floats become `null`.
pub fn json<T: Serialize>(stamp: &Stamp, report: &T) -> serde_json::Result<String> {
    let mut s = serde_json::to_string_pretty(&Stamped { stamp, result: report })?;
    s.push('\n');
    Ok(s)
}

pub fn write(dir: &Path, name: &str, contents: &str) -> io::Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join(name), contents)
}

/// Log-scale overlay of the empirical estimate (with CI bars) and the
/// theoretical bound against t.
pub fn verify_svg(report: &BoundReport) -> String {
    const W: f64 = 640.0;
    const H: f64 = 400.0;
    const L: f64 = 70.0;
    const R: f64 = 20.0;
    const T: f64 = 30.0;
    const B: f64 = 50.0;
    let rows = &report.rows;
    let positive = |v: f64| v > 0.0 && v.is_finite();
    let mut ys: Vec<f64> = Vec::new();
    for r in rows {
        for v in [r.empirical.estimate, r.empirical.ci_lo, r.empirical.ci_hi, r.bound] {
            if positive(v) {
                ys.push(v);
            }
        }
    }
    let (mut ylo, mut yhi) = ys.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    if !ylo.is_finite() {
        ylo = 1e-3;
        yhi = 1.0;
    }
    let (dlo, dhi) = (ylo.log10().floor(), yhi.log10().ceil().max(ylo.log10().floor() + 1.0));
    let (tlo, thi) = rows.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), r| (a.min(r.t), b.max(r.t)));
    let (tlo, thi) = if tlo.is_finite() && thi > tlo { (tlo, thi) } else { (0.0, tlo.max(0.0) + 1.0) };
    let px = |t: f64| L + (t - tlo) / (thi - tlo) * (W - L - R);
    let py = |v: f64| T + (dhi - v.log10()) / (dhi - dlo) * (H - T - B);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<rect x="{L}" y="{T}" width="{}" height="{}" fill="none" stroke="black"/>"#,
        W - L - R,
        H - T - B
    );
    let mut d = dlo as i32;
    while d as f64 <= dhi {
        let y = py(10f64.powi(d));
        let _ = writeln!(s, r##"<line x1="{L}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#ddd"/>"##, W - R);
        let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="end">1e{d}</text>"#, L - 6.0, y + 4.0);
        d += 1;
    }
    for r in rows {
        let x = px(r.t);
        let _ = writeln!(s, r#"<text x="{x:.2}" y="{:.2}" text-anchor="middle">{}</text>"#, H - B + 18.0, fmt_f64(r.t));
    }
    let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">t</text>"#, (L + W - R) / 2.0, H - 10.0);
    // bound polyline over the finite points
    let pts: Vec<String> =
        rows.iter().filter(|r| positive(r.bound)).map(|r| format!("{:.2},{:.2}", px(r.t), py(r.bound))).collect();
    if !pts.is_empty() {
        let _ =
            writeln!(s, r##"<polyline points="{}" fill="none" stroke="#c0392b" stroke-width="2"/>"##, pts.join(" "));
    }
    for r in rows {
        let x = px(r.t);
        let e = &r.empirical;
        if positive(e.ci_hi) {
            let lo = if positive(e.ci_lo) { e.ci_lo } else { 10f64.powf(dlo) };
            let _ = writeln!(
                s,
                r##"<line x1="{x:.2}" y1="{:.2}" x2="{x:.2}" y2="{:.2}" stroke="#2c3e50"/>"##,
                py(lo),
                py(e.ci_hi)
            );
        }
        if positive(e.estimate) {
            let _ = writeln!(s, r##"<circle cx="{x:.2}" cy="{:.2}" r="3" fill="#2c3e50"/>"##, py(e.estimate));
        }
    }
    let _ = writeln!(
        s,
        r##"<text x="{:.2}" y="18" fill="#c0392b">bound 2V/h(t)</text><text x="{:.2}" y="18" fill="#2c3e50">coupling estimate (95% CI)</text>"##,
        L,
        L + 140.0
    );
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_round_trip() {
        assert_eq!(fmt_f64(f64::INFINITY), "+inf");
        assert_eq!(fmt_f64(0.1), "0.1");
        assert_eq!(fmt_f64(2.0), "2");
        let x = 5.436563656918091;
        assert_eq!(fmt_f64(x).parse::<f64>().unwrap(), x);
    }

    #[test]
    fn header_lines() {
        let s = Stamp::new("abc", Some(7)).csv_header();
        assert_eq!(s, format!("# {TOOL}\n# config-sha256 abc\n# seed 7\n"));
    }
}
