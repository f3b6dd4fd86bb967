use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use coexist_core::curve::CurveMeta;
use coexist_core::estimators::ExponentFit;
use coexist_core::{CurveKind, CurveRow, EnvFamily, SurvivalCurve};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::error::CliError;

pub const CURVE_HEADER: [&str; 9] = ["rho", "family", "z1", "z2", "n", "estimate", "stderr", "replicas", "seed"];
pub const FIT_HEADER: [&str; 8] = ["slope", "stderr", "ci_lo", "ci_hi", "intercept", "theta_theory", "n_min", "points"];
pub const REPULSION_HEADER: [&str; 4] = ["n", "fraction", "stderr", "particles"];

/// Shortest decimal that parses back to the same `f64`.
pub fn num(v: f64) -> String {
    format!("{v}")
}

pub fn csv_text(header: &[&str], rows: &[Vec<String>]) -> Result<String, CliError> {
    if rows.is_empty() {
        return Err(CliError::Config("nothing to write: no rows".into()));
    }
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    let io = |e: csv::Error| CliError::Runtime(format!("csv: {e}"));
    w.write_record(header).map_err(io)?;
    for r in rows {
        w.write_record(r).map_err(io)?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::Runtime(format!("csv: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// One line of a coexist or exit-tail CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveCsvRow {
    pub rho: f64,
    pub family: String,
    pub z1: u64,
    pub z2: u64,
    pub n: usize,
    pub estimate: f64,
    pub stderr: f64,
    pub replicas: u64,
    pub seed: u64,
}

pub fn curve_rows(curve: &SurvivalCurve) -> Vec<CurveCsvRow> {
    curve
        .rows
        .iter()
        .map(|r| CurveCsvRow {
            rho: curve.meta.rho,
            family: curve.meta.family.to_string(),
            z1: curve.meta.z[0],
            z2: curve.meta.z[1],
            n: r.n,
            estimate: r.estimate,
            stderr: r.stderr,
            replicas: r.replicas,
            seed: curve.meta.seed,
        })
        .collect()
}

pub fn emit_curve_csv(rows: &[CurveCsvRow]) -> Result<String, CliError> {
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                num(r.rho),
                r.family.clone(),
                r.z1.to_string(),
                r.z2.to_string(),
                r.n.to_string(),
                num(r.estimate),
                num(r.stderr),
                r.replicas.to_string(),
                r.seed.to_string(),
            ]
        })
        .collect();
    csv_text(&CURVE_HEADER, &body)
}

pub fn parse_curve_csv(text: &str) -> Result<Vec<CurveCsvRow>, CliError> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let header: Vec<String> = r
        .headers()
        .map_err(|e| CliError::Config(format!("curve csv: {e}")))?
        .iter()
        .map(str::to_owned)
        .collect();
    if header != CURVE_HEADER {
        return Err(CliError::Config(format!("curve csv header must be {}", CURVE_HEADER.join(","))));
    }
    let rows = r
        .deserialize()
        .collect::<Result<Vec<CurveCsvRow>, _>>()
        .map_err(|e| CliError::Config(format!("curve csv: {e}")))?;
    if rows.is_empty() {
        return Err(CliError::Config("curve csv has no rows".into()));
    }
    Ok(rows)
}

/// Rebuilds a curve from CSV rows that share `rho`, family and `z`.
pub fn curve_from_rows(rows: &[CurveCsvRow]) -> Result<SurvivalCurve, CliError> {
    let first = rows.first().ok_or_else(|| CliError::Config("curve csv has no rows".into()))?;
    if rows.iter().any(|r| r.rho.to_bits() != first.rho.to_bits() || r.family != first.family) {
        return Err(CliError::Config("curve csv mixes several rho or family values".into()));
    }
    let family: EnvFamily = first.family.parse()?;
    let kind = if first.z1 == 0 && first.z2 == 0 { CurveKind::ExitTail } else { CurveKind::Coexist };
    Ok(SurvivalCurve {
        rows: rows
            .iter()
            .map(|r| CurveRow { n: r.n, estimate: r.estimate, stderr: r.stderr, replicas: r.replicas })
            .collect(),
        meta: CurveMeta { kind, rho: first.rho, family, z: [first.z1, first.z2], x: None, seed: first.seed },
        warnings: Vec::new(),
    })
}

/// The exponent a fit is compared against: `theta(rho)` inside, `1/2` for
/// identical environments, undefined for `rho = -1`.
pub fn theta_theory(rho: f64) -> f64 {
    if rho == 1.0 {
        0.5
    } else if rho > -1.0 && rho < 1.0 {
        coexist_core::estimators::theta_of(rho)
    } else {
        f64::NAN
    }
}

pub fn fit_row(fit: &ExponentFit, theta: f64) -> Vec<String> {
    vec![
        num(fit.slope),
        num(fit.stderr),
        num(fit.ci.0),
        num(fit.ci.1),
        num(fit.intercept),
        num(theta),
        fit.n_min.to_string(),
        fit.points.to_string(),
    ]
}

/// Static log-log plot: the curve as one point series, the fitted line and
/// the theoretical slope through the same centre.
pub fn emit_svg(curve: &SurvivalCurve, fit: &ExponentFit, theta: f64) -> Result<String, CliError> {
    let pts: Vec<(f64, f64)> = curve
        .rows
        .iter()
        .filter(|r| r.estimate > 0.0)
        .map(|r| ((r.n as f64).log10(), r.estimate.log10()))
        .collect();
    if pts.is_empty() {
        return Err(CliError::Config("nothing to plot".into()));
    }
    let (w, h, m) = (640.0, 480.0, 60.0);
    let lo_n = (fit.n_min.max(curve.rows[0].n) as f64).ln();
    let hi_n = (fit.n_max as f64).ln();
    let line = |slope: f64, icpt: f64| [(lo_n, icpt + slope * lo_n), (hi_n, icpt + slope * hi_n)];
    let centre = (lo_n + hi_n) / 2.0;
    let fit_line = line(fit.slope, fit.intercept);
    let theory_icpt = fit.intercept + fit.slope * centre + theta * centre;
    let theory_line = line(-theta, theory_icpt);
    let to10 = |v: f64| v / std::f64::consts::LN_10;
    let mut xs: Vec<f64> = pts.iter().map(|p| p.0).collect();
    let mut ys: Vec<f64> = pts.iter().map(|p| p.1).collect();
    for (a, b) in fit_line.iter().chain(theory_line.iter().filter(|_| theta.is_finite())) {
        xs.push(to10(*a));
        ys.push(to10(*b));
    }
    let span = |v: &[f64]| {
        let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if hi > lo { (lo, hi) } else { (lo - 0.5, hi + 0.5) }
    };
    let (x0, x1) = span(&xs);
    let (y0, y1) = span(&ys);
    let sx = |v: f64| m + (v - x0) / (x1 - x0) * (w - 2.0 * m);
    let sy = |v: f64| h - m - (v - y0) / (y1 - y0) * (h - 2.0 * m);

    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#);
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<path class="axes" d="M{m} {t} L{m} {b} L{r} {b}" fill="none" stroke="black"/>"#,
        t = m,
        b = h - m,
        r = w - m
    );
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle" font-size="14">log10 n</text>"#, w / 2.0, h - 15.0);
    let _ = writeln!(
        s,
        r#"<text x="15" y="{}" font-size="14" transform="rotate(-90 15 {})" text-anchor="middle">log10 P</text>"#,
        h / 2.0,
        h / 2.0
    );
    let _ = writeln!(s, r#"<g class="points" fill="steelblue">"#);
    for (x, y) in &pts {
        let _ = writeln!(s, r#"<circle cx="{:.2}" cy="{:.2}" r="3"/>"#, sx(*x), sy(*y));
    }
    let _ = writeln!(s, "</g>");
    let mut seg = |class: &str, colour: &str, l: [(f64, f64); 2], dash: &str| {
        let _ = writeln!(
            s,
            r#"<line class="{class}" x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="{colour}" stroke-width="2"{dash}/>"#,
            sx(to10(l[0].0)),
            sy(to10(l[0].1)),
            sx(to10(l[1].0)),
            sy(to10(l[1].1)),
        );
    };
    seg("fit", "crimson", fit_line, "");
    if theta.is_finite() {
        seg("theory", "gray", theory_line, r#" stroke-dasharray="6 4""#);
    } else {
        seg("theory", "gray", fit_line, r#" stroke-opacity="0""#);
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" font-size="12">slope {:.4} ± {:.4}, theory {:.4}</text>"#,
        m + 10.0,
        m - 20.0,
        fit.slope,
        fit.stderr,
        -theta
    );
    s.push_str("</svg>\n");
    Ok(s)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config: RunConfig,
    pub version: String,
    pub duration_seconds: f64,
    /// File name to SHA-256 of its bytes.
    pub outputs: BTreeMap<String, String>,
    pub stream_rule: String,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn write_file(dir: &Path, name: &str, contents: &str) -> Result<(), CliError> {
    let path = dir.join(name);
    std::fs::write(&path, contents).map_err(|e| CliError::io(&path, e))
}
