//! Measures built from particle ensembles and the functionals used to
//! compare them with fields: weighted empirical Fourier coefficients,
//! negative Sobolev distances, gridded densities with relative entropy,
//! Fisher information and total variation, replica averaging and power-law
//! rate fits.
//!
//! Gridded densities are densities with respect to Lebesgue measure `dx`
//! sampled at the nodes `-π + j·2π/n`; each value stands for the cell
//! centred on its node, so integrals are plain sums times `(2π/n)²`.

use num_complex::Complex64;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::spectral::{grid_nodes, SpectralField};
use crate::torus::{TorusPoint, TWO_PI};

/// Cells below this value count as empty in the Fisher sum.
pub const FISHER_FLOOR: f64 = 1e-14;
/// Slack in the CKP comparison.
pub const CKP_SLACK: f64 = 1e-12;

/// Nonnegative cell values on an `n × n` grid (row-major, `x₁` outermost).
#[derive(Debug, Clone, PartialEq)]
pub struct GriddedDensity {
    n: usize,
    values: Vec<f64>,
}

impl GriddedDensity {
    /// The uniform probability density `1/(2π)²`.
    pub fn uniform(n: usize) -> Self {
        GriddedDensity {
            n,
            values: vec![1.0 / (TWO_PI * TWO_PI); n * n],
        }
    }

    /// Checks shape, finiteness and nonnegativity; does not normalise.
    pub fn new(n: usize, values: Vec<f64>) -> Result<Self> {
        if n == 0 || values.len() != n * n {
            return Err(Error::GridMismatch(format!(
                "expected {}×{n} values, got {}",
                n,
                values.len()
            )));
        }
        if let Some(j) = values.iter().position(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::Validation(format!("density cell {j} has value {}", values[j])));
        }
        Ok(GriddedDensity { n, values })
    }

    /// No checks beyond the length; for callers that validate later.
    pub fn new_unchecked(n: usize, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), n * n);
        GriddedDensity { n, values }
    }

    /// Probability density of a positive field, optionally smoothed by the
    /// Gaussian multiplier `e^{-h²|m|²/2}` first, synthesised on an
    /// `n_out` grid and normalised to integrate to 1.
    ///
    /// Modes the two grids do not share are dropped.
    pub fn from_field(v: &SpectralField, smoothing: Option<f64>, n_out: usize) -> Result<Self> {
        let mut out = SpectralField::zeros(n_out)?;
        let k = (v.n().min(n_out) / 2) as i32 - 1;
        let h2 = smoothing.map_or(0.0, |h| h * h);
        for m1 in -k..=k {
            for m2 in -k..=k {
                let damp = (-0.5 * h2 * (m1 * m1 + m2 * m2) as f64).exp();
                out.set_coeff(m1, m2, v.coeff(m1, m2) * damp);
            }
        }
        let vals = out.to_physical();
        let min = vals.iter().cloned().fold(f64::INFINITY, f64::min);
        if !(min >= 0.0) {
            return Err(Error::Validation(format!("field is not a density: minimum {min}")));
        }
        let mut d = GriddedDensity { n: n_out, values: vals };
        d.normalize()?;
        Ok(d)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn cell_area(&self) -> f64 {
        let h = TWO_PI / self.n as f64;
        h * h
    }

    pub fn integral(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.cell_area()
    }

    pub fn normalize(&mut self) -> Result<()> {
        let total = self.integral();
        if !(total > 0.0) || !total.is_finite() {
            return Err(Error::Validation(format!("density has mass {total}")));
        }
        for v in &mut self.values {
            *v /= total;
        }
        Ok(())
    }

    /// Field of total mass `mass` in the synthesis convention, i.e. with
    /// values `(2π)²·mass·p`.
    pub fn to_field(&self, mass: f64) -> Result<SpectralField> {
        let s = TWO_PI * TWO_PI * mass;
        let vals: Vec<f64> = self.values.iter().map(|v| v * s).collect();
        SpectralField::from_physical(self.n, &vals)
    }

    /// Density shifted by whole cells.
    pub fn roll(&self, s1: usize, s2: usize) -> Self {
        let n = self.n;
        let mut values = vec![0.0; n * n];
        for a in 0..n {
            for b in 0..n {
                values[((a + s1) % n) * n + (b + s2) % n] = self.values[a * n + b];
            }
        }
        GriddedDensity { n, values }
    }

    fn same_grid(&self, other: &GriddedDensity) -> Result<()> {
        if self.n != other.n {
            return Err(Error::GridMismatch(format!("density grids {} and {}", self.n, other.n)));
        }
        Ok(())
    }
}

/// `μ_N = (1/N) Σ ξ_i δ_{X_i}` as a view over positions and weights.
#[derive(Debug, Clone, Copy)]
pub struct WeightedEmpirical<'a> {
    positions: &'a [TorusPoint],
    weights: &'a [f64],
}

impl<'a> WeightedEmpirical<'a> {
    pub fn new(positions: &'a [TorusPoint], weights: &'a [f64]) -> Result<Self> {
        if positions.len() != weights.len() {
            return Err(Error::Validation(format!(
                "{} positions but {} weights",
                positions.len(),
                weights.len()
            )));
        }
        Ok(WeightedEmpirical { positions, weights })
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn positions(&self) -> &[TorusPoint] {
        self.positions
    }

    pub fn weights(&self) -> &[f64] {
        self.weights
    }

    /// `(1/N) Σ ξ_i`.
    pub fn total_mass(&self) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        self.weights.iter().sum::<f64>() / self.len() as f64
    }
}

/// Complex coefficients on the box `‖m‖∞ ≤ cutoff`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeArray {
    cutoff: usize,
    data: Vec<Complex64>,
}

impl ModeArray {
    pub fn zeros(cutoff: usize) -> Self {
        let w = 2 * cutoff + 1;
        ModeArray {
            cutoff,
            data: vec![Complex64::new(0.0, 0.0); w * w],
        }
    }

    pub fn cutoff(&self) -> usize {
        self.cutoff
    }

    fn index(&self, m1: i32, m2: i32) -> usize {
        let c = self.cutoff as i32;
        assert!(m1.abs() <= c && m2.abs() <= c, "mode ({m1}, {m2}) outside cutoff {c}");
        ((m1 + c) * (2 * c + 1) + (m2 + c)) as usize
    }

    pub fn get(&self, m1: i32, m2: i32) -> Complex64 {
        self.data[self.index(m1, m2)]
    }

    pub fn set(&mut self, m1: i32, m2: i32, c: Complex64) {
        let j = self.index(m1, m2);
        self.data[j] = c;
    }

    /// Restriction of a field's coefficients to the box.
    pub fn from_field(v: &SpectralField, cutoff: usize) -> Result<Self> {
        check_extent(v, cutoff)?;
        let mut out = ModeArray::zeros(cutoff);
        let c = cutoff as i32;
        for m1 in -c..=c {
            for m2 in -c..=c {
                out.set(m1, m2, v.coeff(m1, m2));
            }
        }
        Ok(out)
    }
}

fn check_extent(v: &SpectralField, cutoff: usize) -> Result<()> {
    if cutoff >= v.n() / 2 {
        return Err(Error::Config(format!(
            "cutoff {cutoff} exceeds the symmetric extent {} of a {}-grid field",
            v.n() / 2 - 1,
            v.n()
        )));
    }
    Ok(())
}

/// `μ̂(m) = (1/N) Σ_j ξ_j e^{-im·X_j}` for `‖m‖∞ ≤ cutoff`, summed in index
/// order.
pub fn empirical_fourier(mu: &WeightedEmpirical<'_>, cutoff: usize) -> ModeArray {
    let c = cutoff as i32;
    let w = 2 * cutoff + 1;
    let mut out = ModeArray::zeros(cutoff);
    if mu.is_empty() {
        return out;
    }
    let mut e1 = vec![Complex64::new(0.0, 0.0); w];
    let mut e2 = vec![Complex64::new(0.0, 0.0); w];
    for (p, xi) in mu.positions.iter().zip(mu.weights) {
        for (k, m) in (-c..=c).enumerate() {
            e1[k] = Complex64::from_polar(*xi, -(m as f64) * p.x1);
            e2[k] = Complex64::from_polar(1.0, -(m as f64) * p.x2);
        }
        for a in 0..w {
            let row = &mut out.data[a * w..(a + 1) * w];
            for b in 0..w {
                row[b] += e1[a] * e2[b];
            }
        }
    }
    let inv = 1.0 / mu.len() as f64;
    for z in &mut out.data {
        *z *= inv;
    }
    out
}

/// `√(Σ_{‖m‖∞ ≤ cutoff} (1+|m|²)^{-s} |μ̂(m) - v̂(m)|²)`.
///
/// The mean modes are compared first: a ratio far from 1 means the two
/// sides disagree on normalisation (e.g. one is a probability density in
/// `dx`), which is reported rather than measured.
pub fn h_minus_s_distance(mu: &ModeArray, v: &SpectralField, s: f64, cutoff: usize) -> Result<f64> {
    if cutoff > mu.cutoff() {
        return Err(Error::Config(format!(
            "cutoff {cutoff} exceeds empirical cutoff {}",
            mu.cutoff()
        )));
    }
    check_extent(v, cutoff)?;
    let (a, b) = (mu.get(0, 0), v.coeff(0, 0));
    if a.norm() > 0.0 && b.norm() > 0.0 {
        let r = a.norm() / b.norm();
        if !(0.25..=4.0).contains(&r) {
            return Err(Error::Validation(format!(
                "mean modes {} and {} differ by a factor {r}; Fourier conventions disagree",
                a, b
            )));
        }
    }
    let c = cutoff as i32;
    let mut acc = 0.0;
    for m1 in -c..=c {
        for m2 in -c..=c {
            let w = (1.0 + (m1 * m1 + m2 * m2) as f64).powf(-s);
            acc += w * (mu.get(m1, m2) - v.coeff(m1, m2)).norm_sqr();
        }
    }
    Ok(acc.sqrt())
}

/// Wrapped Gaussian of width `h` at the nodes, as a function of the
/// offset `x - node`.
fn wrapped_gaussian_row(x: f64, h: f64, nodes: &[f64], out: &mut [f64]) {
    let wraps = (8.0 * h / TWO_PI).ceil() as i32 + 1;
    let norm = 1.0 / ((TWO_PI).sqrt() * h);
    let inv = 0.5 / (h * h);
    for (o, node) in out.iter_mut().zip(nodes) {
        let d = crate::torus::wrap(x - node);
        let mut acc = 0.0;
        for k in -wraps..=wraps {
            let y = d + k as f64 * TWO_PI;
            acc += (-y * y * inv).exp();
        }
        *o = acc * norm;
    }
}

/// Periodic Gaussian KDE of the position marginal with weights
/// `ξ_i / Σ ξ`, evaluated at the nodes and normalised on the grid.
pub fn kde_density(mu: &WeightedEmpirical<'_>, h: f64, n: usize) -> Result<GriddedDensity> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::Config(format!("bandwidth must be positive, got {h}")));
    }
    if n == 0 {
        return Err(Error::Config("density grid must be nonempty".into()));
    }
    if mu.is_empty() {
        return Err(Error::Validation("no particles to estimate a density from".into()));
    }
    let total: f64 = mu.weights.iter().sum();
    if !(total > 0.0) {
        return Err(Error::Validation(format!("total intensity {total} is not positive")));
    }
    let nodes = grid_nodes(n);
    let mut g1 = vec![0.0; n];
    let mut g2 = vec![0.0; n];
    let mut values = vec![0.0; n * n];
    for (p, xi) in mu.positions.iter().zip(mu.weights) {
        if *xi < 0.0 {
            return Err(Error::Validation("KDE weights must be nonnegative".into()));
        }
        wrapped_gaussian_row(p.x1, h, &nodes, &mut g1);
        wrapped_gaussian_row(p.x2, h, &nodes, &mut g2);
        let w = xi / total;
        for a in 0..n {
            let wa = w * g1[a];
            let row = &mut values[a * n..(a + 1) * n];
            for b in 0..n {
                row[b] += wa * g2[b];
            }
        }
    }
    let mut d = GriddedDensity { n, values };
    d.normalize()?;
    Ok(d)
}

/// `Σ p log(p/q)·area`, floored at 0 and `+∞` when `p > 0 = q` somewhere.
pub fn relative_entropy(p: &GriddedDensity, q: &GriddedDensity) -> Result<f64> {
    p.same_grid(q)?;
    let mut acc = 0.0;
    for (a, b) in p.values.iter().zip(&q.values) {
        if *a > 0.0 {
            if *b <= 0.0 {
                return Ok(f64::INFINITY);
            }
            acc += a * (a / b).ln();
        }
    }
    Ok((acc * p.cell_area()).max(0.0))
}

/// `∫ |∇p|²/p` with periodic central differences.
pub fn fisher_information(p: &GriddedDensity) -> f64 {
    let n = p.n;
    let h = TWO_PI / n as f64;
    let v = &p.values;
    let mut acc = 0.0;
    for a in 0..n {
        let (ap, am) = ((a + 1) % n, (a + n - 1) % n);
        for b in 0..n {
            let c = v[a * n + b];
            if c < FISHER_FLOOR {
                continue;
            }
            let (bp, bm) = ((b + 1) % n, (b + n - 1) % n);
            let d1 = (v[ap * n + b] - v[am * n + b]) / (2.0 * h);
            let d2 = (v[a * n + bp] - v[a * n + bm]) / (2.0 * h);
            acc += (d1 * d1 + d2 * d2) / c;
        }
    }
    acc * p.cell_area()
}

/// `½ Σ |p - q|·area`.
pub fn tv_distance(p: &GriddedDensity, q: &GriddedDensity) -> Result<f64> {
    p.same_grid(q)?;
    let s: f64 = p.values.iter().zip(&q.values).map(|(a, b)| (a - b).abs()).sum();
    Ok(0.5 * s * p.cell_area())
}

/// `tv ≤ √(2H)` with the fixed slack.
pub fn ckp_holds(tv: f64, rel_entropy: f64) -> bool {
    tv <= (2.0 * rel_entropy).sqrt() + CKP_SLACK
}

/// Per-time metrics for one configuration, or their replica average.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricReport {
    pub t: f64,
    pub n_particles: usize,
    pub replicas: usize,
    pub h_minus_s: f64,
    pub h_minus_s_sq: f64,
    pub tv: f64,
    pub rel_entropy: f64,
    pub fisher: f64,
    pub ckp_ok: bool,
    pub stderr: MetricStderr,
}

/// Standard errors of the replica means; all zero for a single replica.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct MetricStderr {
    pub h_minus_s: f64,
    pub h_minus_s_sq: f64,
    pub tv: f64,
    pub rel_entropy: f64,
    pub fisher: f64,
}

impl MetricReport {
    /// Single-replica report; the CKP flag is derived from `tv` and the entropy.
    pub fn single(t: f64, n_particles: usize, h_minus_s: f64, tv: f64, rel_entropy: f64, fisher: f64) -> Self {
        MetricReport {
            t,
            n_particles,
            replicas: 1,
            h_minus_s,
            h_minus_s_sq: h_minus_s * h_minus_s,
            tv,
            rel_entropy,
            fisher,
            ckp_ok: ckp_holds(tv, rel_entropy),
            stderr: MetricStderr::default(),
        }
    }

    pub const CSV_HEADER: &'static str = "t,N,R,h_minus_s,h_minus_s_sq,tv,rel_entropy,fisher,ckp_ok,\
h_minus_s_stderr,h_minus_s_sq_stderr,tv_stderr,rel_entropy_stderr,fisher_stderr";

    pub fn csv_row(&self) -> String {
        let e = &self.stderr;
        format!(
            "{},{},{},{:e},{:e},{:e},{:e},{:e},{},{:e},{:e},{:e},{:e},{:e}",
            self.t,
            self.n_particles,
            self.replicas,
            self.h_minus_s,
            self.h_minus_s_sq,
            self.tv,
            self.rel_entropy,
            self.fisher,
            self.ckp_ok,
            e.h_minus_s,
            e.h_minus_s_sq,
            e.tv,
            e.rel_entropy,
            e.fisher
        )
    }
}

/// One replica's report together with the fingerprint of the common path
/// it was run under.
#[derive(Debug, Clone)]
pub struct ReplicaReport {
    pub fingerprint: String,
    pub report: MetricReport,
}

fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    let r = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / r;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (r - 1.0);
    (mean, (var / r).sqrt())
}

/// Mean and standard error over replicas sharing one common path.
///
/// The CKP flag of the average is recomputed from the averaged values; it
/// holds whenever it holds replica-wise, since `√(2H)` is concave.
pub fn conditional_average(reports: &[ReplicaReport]) -> Result<MetricReport> {
    let first = reports
        .first()
        .ok_or_else(|| Error::Validation("no replicas to average".into()))?;
    for r in reports {
        if r.fingerprint != first.fingerprint {
            return Err(Error::Validation(format!(
                "replicas ran under different common paths ({} vs {})",
                r.fingerprint, first.fingerprint
            )));
        }
        if r.report.t != first.report.t || r.report.n_particles != first.report.n_particles {
            return Err(Error::Validation("replica reports refer to different (t, N)".into()));
        }
    }
    let col = |f: fn(&MetricReport) -> f64| -> (f64, f64) {
        mean_stderr(&reports.iter().map(|r| f(&r.report)).collect::<Vec<_>>())
    };
    let hs = col(|r| r.h_minus_s);
    let hs2 = col(|r| r.h_minus_s_sq);
    let tv = col(|r| r.tv);
    let re = col(|r| r.rel_entropy);
    let fi = col(|r| r.fisher);
    Ok(MetricReport {
        t: first.report.t,
        n_particles: first.report.n_particles,
        replicas: reports.len(),
        h_minus_s: hs.0,
        h_minus_s_sq: hs2.0,
        tv: tv.0,
        rel_entropy: re.0,
        fisher: fi.0,
        ckp_ok: ckp_holds(tv.0, re.0),
        stderr: MetricStderr {
            h_minus_s: hs.1,
            h_minus_s_sq: hs2.1,
            tv: tv.1,
            rel_entropy: re.1,
            fisher: fi.1,
        },
    })
}

/// Least-squares line through `(log N, log error)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub points: Vec<(f64, f64)>,
}

pub fn rate_fit(points: &[(f64, f64)]) -> Result<RateFit> {
    if points.len() < 3 {
        return Err(Error::Validation(format!(
            "rate fit needs at least 3 points, got {}",
            points.len()
        )));
    }
    if let Some((n, e)) = points
        .iter()
        .find(|(n, e)| !(*n > 0.0 && *e > 0.0 && n.is_finite() && e.is_finite()))
    {
        return Err(Error::Validation(format!(
            "rate fit needs positive finite data, got ({n}, {e})"
        )));
    }
    let xs: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let k = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / k;
    let my = ys.iter().sum::<f64>() / k;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx <= 1e-300 {
        return Err(Error::Validation("rate fit needs at least two distinct N".into()));
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (y - intercept - slope * x).powi(2))
        .sum();
    let ss_tot: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
    let r_squared = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 };
    Ok(RateFit {
        slope,
        intercept,
        r_squared,
        points: points.to_vec(),
    })
}

/// Mean of `|X_i - X_j|^{-r}` over ordered pairs `i ≠ j`.
pub fn pair_moment(positions: &[TorusPoint], r: f64) -> f64 {
    let n = positions.len();
    if n < 2 {
        return 0.0;
    }
    let mut acc = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            acc += 2.0 * positions[i].distance(&positions[j]).powf(-r);
        }
    }
    acc / (n * (n - 1)) as f64
}

/// One point of the singular-moment diagnostic: the Fisher information of
/// a 2-marginal surrogate and the inverse-distance moment.
///
/// The 2-marginal is approximated by the product of two copies of the KDE
/// 1-marginal, whose Fisher information is twice that of the marginal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SingularMomentSample {
    pub fisher_two_marginal: f64,
    pub moment: f64,
}

impl SingularMomentSample {
    pub fn from_ensemble(mu: &WeightedEmpirical<'_>, kde: &GriddedDensity, r: f64) -> Self {
        SingularMomentSample {
            fisher_two_marginal: 2.0 * fisher_information(kde),
            moment: pair_moment(mu.positions, r),
        }
    }
}

/// Smallest `C` with `moment ≤ C(I^β + 1)` on every sample.
pub fn singular_envelope(samples: &[SingularMomentSample], beta: f64) -> f64 {
    samples
        .iter()
        .map(|s| s.moment / (s.fisher_two_marginal.powf(beta) + 1.0))
        .fold(0.0, f64::max)
}
