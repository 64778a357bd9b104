//! SVG plots: 2D PCA scatter of embeddings and training convergence curves.
//!
//! Output is plain SVG 1.1 with no external resources. Numbers are printed
//! with fixed precision so identical inputs give identical bytes.

use std::fmt::Write as _;

use crate::autodiff::Tensor;
use crate::error::{contract, Error, Result};
use crate::training::RunLog;

pub const WIDTH: f64 = 800.0;
pub const HEIGHT: f64 = 600.0;
const MARGIN_LEFT: f64 = 70.0;
const MARGIN_RIGHT: f64 = 170.0;
const MARGIN_Y: f64 = 50.0;

pub const PALETTE: [&str; 12] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
    "#393b79", "#637939",
];

const POWER_ITERATIONS: usize = 1000;

/// Class and role of one embedded point.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PointTag {
    pub class: usize,
    pub is_support: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectedPoint {
    pub x: f64,
    pub y: f64,
    pub class: usize,
    pub is_support: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Projection2D {
    pub mean: Vec<f64>,
    /// Orthonormal principal axes, largest variance first.
    pub axes: [Vec<f64>; 2],
    /// Variance along each axis.
    pub variances: [f64; 2],
    pub points: Vec<ProjectedPoint>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn normalize(v: &mut [f64]) -> f64 {
    let n = dot(v, v).sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    n
}

fn remove_component(v: &mut [f64], axis: &[f64]) {
    let c = dot(v, axis);
    v.iter_mut().zip(axis).for_each(|(x, a)| *x -= c * a);
}

fn mat_vec(c: &[f64], m: usize, v: &[f64]) -> Vec<f64> {
    (0..m).map(|i| dot(&c[i * m..(i + 1) * m], v)).collect()
}

/// Flips `v` so its largest-magnitude coordinate (first on ties) is positive.
fn fix_sign(v: &mut [f64]) {
    let mut best = 0;
    for i in 1..v.len() {
        if v[i].abs() > v[best].abs() {
            best = i;
        }
    }
    if v[best] < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

/// Dominant unit eigenvector of `c` orthogonal to `against`.
fn power_iterate(c: &[f64], m: usize, against: Option<&[f64]>) -> Vec<f64> {
    let start: Vec<f64> = (0..m).map(|i| 1.0 / (i + 1) as f64).collect();
    let mut v = start.clone();
    if let Some(a) = against {
        remove_component(&mut v, a);
        if normalize(&mut v) < 1e-8 {
            // Start parallel to the first axis: use the basis vector it touches least.
            let k = (0..m).fold(0, |k, i| if a[i].abs() < a[k].abs() { i } else { k });
            v = vec![0.0; m];
            v[k] = 1.0;
            remove_component(&mut v, a);
        }
    }
    normalize(&mut v);
    let floor = 1e-12 * c.iter().fold(0.0f64, |acc, x| acc.max(x.abs())) * m as f64;
    for _ in 0..POWER_ITERATIONS {
        let mut w = mat_vec(c, m, &v);
        if let Some(a) = against {
            remove_component(&mut w, a);
        }
        // Nothing left beyond rounding noise: keep the current direction.
        if normalize(&mut w) <= floor {
            break;
        }
        v = w;
    }
    if let Some(a) = against {
        for _ in 0..2 {
            remove_component(&mut v, a);
            normalize(&mut v);
        }
    }
    fix_sign(&mut v);
    v
}

/// Top-2 principal components of the mean-centered rows of `embeddings`
/// (`[n, M]`, n >= 2, M >= 2). `tags` gives class and role per row.
pub fn pca_2d(embeddings: &Tensor, tags: &[PointTag]) -> Result<Projection2D> {
    let (n, m) = match embeddings.shape() {
        [n, m] if *n >= 2 && *m >= 2 => (*n, *m),
        s => return Err(contract(format!("pca_2d needs [n >= 2, M >= 2] rows, got {s:?}"))),
    };
    if tags.len() != n {
        return Err(contract(format!("pca_2d: {} tags for {n} rows", tags.len())));
    }
    let rows: Vec<&[f64]> = embeddings.rows().collect();
    let mean: Vec<f64> = (0..m).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n as f64).collect();
    let centered: Vec<Vec<f64>> = rows.iter().map(|r| r.iter().zip(&mean).map(|(x, mu)| x - mu).collect()).collect();
    let mut cov = vec![0.0; m * m];
    for r in &centered {
        for i in 0..m {
            for j in 0..m {
                cov[i * m + j] += r[i] * r[j];
            }
        }
    }
    cov.iter_mut().for_each(|c| *c /= (n - 1) as f64);
    let trace: f64 = (0..m).map(|i| cov[i * m + i]).sum();
    let scale = rows.iter().flat_map(|r| r.iter()).fold(0.0f64, |a, x| a.max(x.abs()));
    if trace <= 1e-24 * scale.max(1.0).powi(2) {
        return Err(Error::Degenerate("all rows are identical; nothing to project".into()));
    }
    let a1 = power_iterate(&cov, m, None);
    let a2 = power_iterate(&cov, m, Some(&a1));
    let variance = |a: &[f64]| dot(a, &mat_vec(&cov, m, a));
    let variances = [variance(&a1), variance(&a2)];
    let points = centered
        .iter()
        .zip(tags)
        .map(|(r, t)| ProjectedPoint { x: dot(r, &a1), y: dot(r, &a2), class: t.class, is_support: t.is_support })
        .collect();
    Ok(Projection2D { mean, axes: [a1, a2], variances, points })
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Linear map from a data range onto a pixel range; a zero-width data range
/// is widened around its value.
#[derive(Clone, Copy)]
struct Axis {
    lo: f64,
    hi: f64,
    p0: f64,
    p1: f64,
}

impl Axis {
    fn new(lo: f64, hi: f64, p0: f64, p1: f64) -> Self {
        let (lo, hi) = if hi - lo > 1e-12 * (lo.abs() + hi.abs()).max(1e-300) {
            let pad = 0.05 * (hi - lo);
            (lo - pad, hi + pad)
        } else {
            let pad = if lo == 0.0 { 1.0 } else { 0.1 * lo.abs() };
            (lo - pad, hi + pad)
        };
        Self { lo, hi, p0, p1 }
    }

    fn map(&self, v: f64) -> f64 {
        self.p0 + (v - self.lo) / (self.hi - self.lo) * (self.p1 - self.p0)
    }

    fn ticks(&self, count: usize) -> Vec<f64> {
        (0..count).map(|i| self.lo + (self.hi - self.lo) * i as f64 / (count - 1) as f64).collect()
    }
}

fn fmt_tick(v: f64) -> String {
    let a = v.abs();
    if a != 0.0 && !(1e-3..1e5).contains(&a) {
        format!("{v:.2e}")
    } else {
        format!("{v:.3}")
    }
}

fn header(s: &mut String, title: &str) {
    let _ = writeln!(s, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    let _ = writeln!(s, r#"<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="28" font-family="sans-serif" font-size="16" text-anchor="middle">{}</text>"#,
        (MARGIN_LEFT + WIDTH - MARGIN_RIGHT) / 2.0,
        esc(title)
    );
}

fn axes(s: &mut String, x: Axis, y: Axis, x_label: &str, y_label: &str) {
    let (left, right, top, bottom) = (MARGIN_LEFT, WIDTH - MARGIN_RIGHT, MARGIN_Y, HEIGHT - MARGIN_Y);
    let _ = writeln!(s, r#"<g stroke="black" stroke-width="1">"#);
    let _ = writeln!(s, r#"<line x1="{left:.2}" y1="{bottom:.2}" x2="{right:.2}" y2="{bottom:.2}"/>"#);
    let _ = writeln!(s, r#"<line x1="{left:.2}" y1="{top:.2}" x2="{left:.2}" y2="{bottom:.2}"/>"#);
    for t in x.ticks(5) {
        let px = x.map(t);
        let _ = writeln!(s, r#"<line x1="{px:.2}" y1="{bottom:.2}" x2="{px:.2}" y2="{:.2}"/>"#, bottom + 5.0);
    }
    for t in y.ticks(5) {
        let py = y.map(t);
        let _ = writeln!(s, r#"<line x1="{:.2}" y1="{py:.2}" x2="{left:.2}" y2="{py:.2}"/>"#, left - 5.0);
    }
    let _ = writeln!(s, "</g>");
    let _ = writeln!(s, r#"<g font-family="sans-serif" font-size="11">"#);
    for t in x.ticks(5) {
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            x.map(t),
            bottom + 18.0,
            fmt_tick(t)
        );
    }
    for t in y.ticks(5) {
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#,
            left - 8.0,
            y.map(t) + 4.0,
            fmt_tick(t)
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle" font-size="13">{}</text>"#,
        (left + right) / 2.0,
        HEIGHT - 12.0,
        esc(x_label)
    );
    let _ = writeln!(
        s,
        r#"<text x="16" y="{:.2}" text-anchor="middle" font-size="13" transform="rotate(-90 16 {:.2})">{}</text>"#,
        (top + bottom) / 2.0,
        (top + bottom) / 2.0,
        esc(y_label)
    );
    let _ = writeln!(s, "</g>");
}

fn legend(s: &mut String, entries: &[(String, &str)]) {
    let x = WIDTH - MARGIN_RIGHT + 20.0;
    let _ = writeln!(s, r#"<g font-family="sans-serif" font-size="12">"#);
    for (i, (label, color)) in entries.iter().enumerate() {
        let y = MARGIN_Y + 10.0 + 20.0 * i as f64;
        let _ = writeln!(s, r#"<rect x="{x:.2}" y="{:.2}" width="12" height="12" fill="{color}"/>"#, y - 10.0);
        let _ = writeln!(s, r#"<text x="{:.2}" y="{y:.2}">{}</text>"#, x + 18.0, esc(label));
    }
    let _ = writeln!(s, "</g>");
}

fn star_points(cx: f64, cy: f64, outer: f64, inner: f64) -> String {
    (0..10)
        .map(|k| {
            let r = if k % 2 == 0 { outer } else { inner };
            let a = std::f64::consts::PI * (k as f64 / 5.0 - 0.5);
            format!("{:.2},{:.2}", cx + r * a.cos(), cy + r * a.sin())
        })
        .collect::<Vec<_>>()
        .join(" ")
}

/// Scatter of projected points: supports as stars, queries as circles, one
/// palette color per class. `class_names[c]` labels class `c` in the legend.
pub fn scatter_svg(projection: &Projection2D, class_names: &[String], palette: &[&str]) -> Result<String> {
    if projection.points.is_empty() {
        return Err(contract("scatter needs at least one point"));
    }
    if palette.is_empty() {
        return Err(contract("empty palette"));
    }
    let classes = projection.points.iter().map(|p| p.class).max().unwrap() + 1;
    let color = |c: usize| palette[c % palette.len()];
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for p in &projection.points {
        x0 = x0.min(p.x);
        x1 = x1.max(p.x);
        y0 = y0.min(p.y);
        y1 = y1.max(p.y);
    }
    let xa = Axis::new(x0, x1, MARGIN_LEFT, WIDTH - MARGIN_RIGHT);
    let ya = Axis::new(y0, y1, HEIGHT - MARGIN_Y, MARGIN_Y);

    let mut s = String::new();
    header(&mut s, "Embedding projection (PCA)");
    axes(&mut s, xa, ya, "PC1", "PC2");
    let _ = writeln!(s, r#"<g stroke="black" stroke-width="0.5">"#);
    for p in projection.points.iter().filter(|p| !p.is_support) {
        let _ = writeln!(
            s,
            r#"<circle cx="{:.2}" cy="{:.2}" r="4" fill="{}" fill-opacity="0.7"/>"#,
            xa.map(p.x),
            ya.map(p.y),
            color(p.class)
        );
    }
    for p in projection.points.iter().filter(|p| p.is_support) {
        let _ = writeln!(
            s,
            r#"<polygon points="{}" fill="{}"/>"#,
            star_points(xa.map(p.x), ya.map(p.y), 10.0, 4.0),
            color(p.class)
        );
    }
    let _ = writeln!(s, "</g>");
    let entries: Vec<(String, &str)> = (0..classes)
        .map(|c| (class_names.get(c).cloned().unwrap_or_else(|| format!("class {c}")), color(c)))
        .collect();
    legend(&mut s, &entries);
    s.push_str("</svg>\n");
    Ok(s)
}

/// A plottable column of `log.csv`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Series {
    MetaLoss,
    InnerLoss,
    Lr,
    ValAccuracy,
}

impl Series {
    pub fn name(self) -> &'static str {
        match self {
            Series::MetaLoss => "meta_loss",
            Series::InnerLoss => "inner_loss",
            Series::Lr => "lr",
            Series::ValAccuracy => "val_accuracy",
        }
    }

    fn points(self, log: &RunLog) -> Vec<(f64, f64)> {
        log.records()
            .iter()
            .filter_map(|r| {
                let v = match self {
                    Series::MetaLoss => Some(r.meta_loss),
                    Series::InnerLoss => r.inner_loss,
                    Series::Lr => Some(r.lr),
                    Series::ValAccuracy => r.val_accuracy,
                };
                v.map(|v| (r.episode as f64, v))
            })
            .collect()
    }
}

impl std::str::FromStr for Series {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [Series::MetaLoss, Series::InnerLoss, Series::Lr, Series::ValAccuracy]
            .into_iter()
            .find(|x| x.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown series {s:?}")))
    }
}

/// One polyline per selected series that has data; episode on x.
pub fn convergence_svg(log: &RunLog, series: &[Series]) -> Result<String> {
    if log.len() < 2 {
        return Err(contract(format!("convergence plot needs >= 2 log records, got {}", log.len())));
    }
    let lines: Vec<(Series, Vec<(f64, f64)>)> =
        series.iter().map(|&s| (s, s.points(log))).filter(|(_, p)| !p.is_empty()).collect();
    if lines.is_empty() {
        return Err(contract("no selected series has data"));
    }
    let all = lines.iter().flat_map(|(_, p)| p.iter());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in all {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    let xa = Axis::new(x0, x1, MARGIN_LEFT, WIDTH - MARGIN_RIGHT);
    let ya = Axis::new(y0, y1, HEIGHT - MARGIN_Y, MARGIN_Y);
    let mut s = String::new();
    header(&mut s, "Convergence");
    axes(&mut s, xa, ya, "episode", "value");
    for (i, (_, pts)) in lines.iter().enumerate() {
        let coords: Vec<String> = pts.iter().map(|&(x, y)| format!("{:.2},{:.2}", xa.map(x), ya.map(y))).collect();
        let _ = writeln!(
            s,
            r#"<polyline points="{}" fill="none" stroke="{}" stroke-width="1.5"/>"#,
            coords.join(" "),
            PALETTE[i % PALETTE.len()]
        );
    }
    let entries: Vec<(String, &str)> =
        lines.iter().enumerate().map(|(i, (k, _))| (k.name().to_string(), PALETTE[i % PALETTE.len()])).collect();
    legend(&mut s, &entries);
    s.push_str("</svg>\n");
    Ok(s)
}

/// [`convergence_svg`] over `log.csv` text.
pub fn convergence_svg_from_csv(csv: &str, series: &[Series]) -> Result<String> {
    convergence_svg(&RunLog::from_csv(csv)?, series)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use crate::training::LogRecord;

    fn tags(n: usize) -> Vec<PointTag> {
        (0..n).map(|i| PointTag { class: i % 3, is_support: i % 4 == 0 }).collect()
    }

    fn sym_eigen(cov: &[f64], m: usize) -> Vec<f64> {
        let mat = nalgebra::DMatrix::from_row_slice(m, m, cov);
        let mut ev: Vec<f64> = mat.symmetric_eigen().eigenvalues.iter().copied().collect();
        ev.sort_by(|a, b| b.partial_cmp(a).unwrap());
        ev
    }

    fn covariance(rows: &[Vec<f64>]) -> Vec<f64> {
        let (n, m) = (rows.len(), rows[0].len());
        let mean: Vec<f64> = (0..m).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n as f64).collect();
        let mut c = vec![0.0; m * m];
        for r in rows {
            for i in 0..m {
                for j in 0..m {
                    c[i * m + j] += (r[i] - mean[i]) * (r[j] - mean[j]) / (n - 1) as f64;
                }
            }
        }
        c
    }

    #[test]
    fn axis_aligned_2d_is_centered_input() {
        let rows = vec![vec![-3.0, 0.0], vec![3.0, 0.0], vec![0.0, 0.5], vec![0.0, -0.5]];
        let t = Tensor::from_rows(&rows).unwrap();
        let p = pca_2d(&t, &tags(4)).unwrap();
        for (pt, r) in p.points.iter().zip(&rows) {
            assert!((pt.x.abs() - r[0].abs()).abs() < 1e-10);
            assert!((pt.y.abs() - r[1].abs()).abs() < 1e-10);
        }
        assert!(p.variances[0] >= p.variances[1]);
    }

    #[test]
    fn matches_dense_eigensolver() {
        let mut rng = Rng::new(3);
        for m in [2usize, 3, 5] {
            let rows: Vec<Vec<f64>> =
                (0..30).map(|_| (0..m).map(|j| (j + 1) as f64 * rng.normal() + 2.0).collect()).collect();
            let p = pca_2d(&Tensor::from_rows(&rows).unwrap(), &tags(30)).unwrap();
            let ev = sym_eigen(&covariance(&rows), m);
            assert!((p.variances[0] + p.variances[1] - ev[0] - ev[1]).abs() < 1e-8);
            assert!((p.variances[0] - ev[0]).abs() < 1e-8);
            let [a, b] = &p.axes;
            assert!((dot(a, a) - 1.0).abs() < 1e-10 && (dot(b, b) - 1.0).abs() < 1e-10 && dot(a, b).abs() < 1e-10);
        }
    }

    #[test]
    fn duplicates_and_translation() {
        let mut rng = Rng::new(4);
        let rows: Vec<Vec<f64>> = (0..10).map(|_| (0..4).map(|_| rng.normal()).collect()).collect();
        let mut doubled = rows.clone();
        doubled.extend(rows.iter().cloned());
        let p = pca_2d(&Tensor::from_rows(&doubled).unwrap(), &tags(20)).unwrap();
        for i in 0..10 {
            assert_eq!((p.points[i].x, p.points[i].y), (p.points[i + 10].x, p.points[i + 10].y));
        }
        let shifted: Vec<Vec<f64>> = rows.iter().map(|r| r.iter().map(|x| x + 7.5).collect()).collect();
        let a = pca_2d(&Tensor::from_rows(&rows).unwrap(), &tags(10)).unwrap();
        let b = pca_2d(&Tensor::from_rows(&shifted).unwrap(), &tags(10)).unwrap();
        for (u, v) in a.points.iter().zip(&b.points) {
            assert!((u.x.abs() - v.x.abs()).abs() < 1e-9 && (u.y.abs() - v.y.abs()).abs() < 1e-9);
        }
    }

    #[test]
    fn degenerate_and_bad_shapes() {
        let same = Tensor::from_rows(&[vec![1.0, 2.0, 3.0], vec![1.0, 2.0, 3.0]]).unwrap();
        assert!(matches!(pca_2d(&same, &tags(2)), Err(Error::Degenerate(_))));
        let one = Tensor::from_rows(&[vec![1.0, 2.0]]).unwrap();
        assert!(pca_2d(&one, &tags(1)).is_err());
        let narrow = Tensor::from_rows(&[vec![1.0], vec![2.0]]).unwrap();
        assert!(pca_2d(&narrow, &tags(2)).is_err());
    }

    #[test]
    fn rank_one_data_still_gives_orthonormal_axes() {
        let rows: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64, 2.0 * i as f64, 0.0]).collect();
        let p = pca_2d(&Tensor::from_rows(&rows).unwrap(), &tags(6)).unwrap();
        let [a, b] = &p.axes;
        assert!(dot(a, b).abs() < 1e-10 && (dot(b, b) - 1.0).abs() < 1e-10);
        assert!(p.variances[1].abs() < 1e-10);
    }

    fn log(values: &[f64]) -> RunLog {
        let mut l = RunLog::new();
        for (i, &v) in values.iter().enumerate() {
            l.push(LogRecord { episode: i as u64, meta_loss: v, inner_loss: Some(v / 2.0), lr: 1e-3, val_accuracy: None })
                .unwrap();
        }
        l
    }

    fn polyline_ys(svg: &str) -> Vec<Vec<f64>> {
        svg.lines()
            .filter_map(|l| l.strip_prefix("<polyline points=\""))
            .map(|l| {
                l.split('"').next().unwrap().split(' ').map(|p| p.split(',').nth(1).unwrap().parse().unwrap()).collect()
            })
            .collect()
    }

    #[test]
    fn convergence_shapes() {
        let flat = convergence_svg(&log(&[2.0, 2.0, 2.0]), &[Series::MetaLoss]).unwrap();
        let ys = polyline_ys(&flat);
        assert_eq!(ys.len(), 1);
        assert!(ys[0].windows(2).all(|w| w[0] == w[1]));

        let dec = convergence_svg(&log(&[3.0, 2.0, 1.5, 0.2]), &[Series::MetaLoss, Series::InnerLoss]).unwrap();
        let ys = polyline_ys(&dec);
        assert_eq!(ys.len(), 2);
        assert!(ys[0].windows(2).all(|w| w[1] > w[0]));
        roxmltree::Document::parse(&dec).unwrap();

        assert!(convergence_svg(&log(&[1.0]), &[Series::MetaLoss]).is_err());
        assert!(convergence_svg(&log(&[1.0, 2.0]), &[Series::ValAccuracy]).is_err());
    }

    #[test]
    fn csv_errors_carry_line() {
        let text = "episode,meta_loss,inner_loss,lr,val_accuracy\n0,1,,0.1,\n1,x,,0.1,\n";
        assert!(matches!(convergence_svg_from_csv(text, &[Series::MetaLoss]), Err(Error::Parse { line: 3, .. })));
    }

    #[test]
    fn scatter_counts_and_determinism() {
        let mut rng = Rng::new(5);
        let rows: Vec<Vec<f64>> = (0..12).map(|_| (0..3).map(|_| rng.normal()).collect()).collect();
        let t = tags(12);
        let p = pca_2d(&Tensor::from_rows(&rows).unwrap(), &t).unwrap();
        let names: Vec<String> = vec!["a<b".into(), "c".into(), "d".into()];
        let svg = scatter_svg(&p, &names, &PALETTE).unwrap();
        let doc = roxmltree::Document::parse(&svg).unwrap();
        let count = |tag: &str| doc.descendants().filter(|n| n.has_tag_name(tag)).count();
        let supports = t.iter().filter(|x| x.is_support).count();
        assert_eq!(count("polygon"), supports);
        assert_eq!(count("circle"), 12 - supports);
        assert_eq!(svg, scatter_svg(&p, &names, &PALETTE).unwrap());
    }
}
