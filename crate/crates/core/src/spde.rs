//! Pseudospectral solver for the stochastic vorticity equation
//! `dv = (νΔv - K*v·∇v) dt - Σ_k σ_k·∇v ∘ dW^k` on the `n × n` grid.
//!
//! Each step is a Lie splitting: first the deterministic part by an
//! integrating-factor Euler step `v̂ ← e^{-ν|m|²dt}(v̂ - dt·N̂)`, where `N̂`
//! is the 2/3-dealiased advection term, then the transport noise. The noise
//! half is either an exact translation by `Σ σ_k ΔW^k` (all `σ_k` constant)
//! or the Itô form `-Σ σ_k·∇v ΔW^k + ½Σ σ_k·∇(σ_k·∇v) dt`. The mean mode of
//! every increment is set to zero, so `v̂(0)` never changes.

use std::io::Write;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::noise::NoisePaths;
use crate::spectral::{self, dealias_cutoff, grid_nodes, mode_of, SpectralField};

/// One term `a cos(p·x + φ)` of a stream function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StreamTerm {
    pub amplitude: f64,
    pub mode: [i32; 2],
    #[serde(default)]
    pub phase: f64,
}

/// A divergence-free noise vector field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SigmaField {
    Constant {
        vector: [f64; 2],
    },
    /// `σ = ∇⊥ψ = (∂₂ψ, -∂₁ψ)` for `ψ = Σ a cos(p·x + φ)`.
    Stream {
        terms: Vec<StreamTerm>,
    },
}

impl SigmaField {
    pub fn constant(a: f64, b: f64) -> Self {
        SigmaField::Constant { vector: [a, b] }
    }

    pub fn is_constant(&self) -> bool {
        matches!(self, SigmaField::Constant { .. })
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match self {
            SigmaField::Constant { vector } => vector.iter().all(|v| v.is_finite()),
            SigmaField::Stream { terms } => terms
                .iter()
                .all(|t| t.amplitude.is_finite() && t.phase.is_finite() && t.mode != [0, 0]),
        };
        if !ok {
            return Err(Error::Config(format!("invalid noise field {self:?}")));
        }
        Ok(())
    }

    pub fn eval(&self, x1: f64, x2: f64) -> [f64; 2] {
        match self {
            SigmaField::Constant { vector } => *vector,
            SigmaField::Stream { terms } => {
                let mut out = [0.0; 2];
                for t in terms {
                    let (p1, p2) = (t.mode[0] as f64, t.mode[1] as f64);
                    let s = t.amplitude * (p1 * x1 + p2 * x2 + t.phase).sin();
                    out[0] -= p2 * s;
                    out[1] += p1 * s;
                }
                out
            }
        }
    }

    /// `J[i][j] = ∂_j σ_i`.
    pub fn jacobian(&self, x1: f64, x2: f64) -> [[f64; 2]; 2] {
        let mut out = [[0.0; 2]; 2];
        if let SigmaField::Stream { terms } = self {
            for t in terms {
                let (p1, p2) = (t.mode[0] as f64, t.mode[1] as f64);
                let c = t.amplitude * (p1 * x1 + p2 * x2 + t.phase).cos();
                let dir = [-p2, p1];
                for (i, d) in dir.iter().enumerate() {
                    out[i][0] += c * d * p1;
                    out[i][1] += c * d * p2;
                }
            }
        }
        out
    }

    /// `(σ·∇)σ` at a point.
    pub fn self_advection(&self, x1: f64, x2: f64) -> [f64; 2] {
        let s = self.eval(x1, x2);
        let j = self.jacobian(x1, x2);
        [j[0][0] * s[0] + j[0][1] * s[1], j[1][0] * s[0] + j[1][1] * s[1]]
    }
}

/// The `d` noise fields.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SigmaBasis {
    pub fields: Vec<SigmaField>,
}

impl SigmaBasis {
    pub fn new(fields: Vec<SigmaField>) -> Self {
        SigmaBasis { fields }
    }

    /// `σ₁ = (0.7, -0.3)` and `σ₂ = 0.3(sin x₂, sin x₁)`.
    pub fn default_pair() -> Self {
        SigmaBasis::new(vec![
            SigmaField::constant(0.7, -0.3),
            SigmaField::Stream {
                terms: vec![
                    StreamTerm {
                        amplitude: 0.3,
                        mode: [1, 0],
                        phase: 0.0,
                    },
                    StreamTerm {
                        amplitude: -0.3,
                        mode: [0, 1],
                        phase: 0.0,
                    },
                ],
            },
        ])
    }

    pub fn d(&self) -> usize {
        self.fields.len()
    }

    pub fn all_constant(&self) -> bool {
        self.fields.iter().all(SigmaField::is_constant)
    }

    pub fn validate(&self) -> Result<()> {
        self.fields.iter().try_for_each(SigmaField::validate)
    }

    /// `Σ_k σ_k(x) ΔW^k`.
    pub fn displacement(&self, x1: f64, x2: f64, dw: &[f64]) -> [f64; 2] {
        let mut out = [0.0; 2];
        for (f, w) in self.fields.iter().zip(dw) {
            let s = f.eval(x1, x2);
            out[0] += s[0] * w;
            out[1] += s[1] * w;
        }
        out
    }

    /// Itô drift `½ Σ_k (σ_k·∇)σ_k` at a point.
    pub fn strat_drift(&self, x1: f64, x2: f64) -> [f64; 2] {
        let mut out = [0.0; 2];
        for f in &self.fields {
            let a = f.self_advection(x1, x2);
            out[0] += 0.5 * a[0];
            out[1] += 0.5 * a[1];
        }
        out
    }
}

/// How the Stratonovich transport term is discretised.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StratonovichMode {
    /// Exact translation when every `σ_k` is constant, Itô otherwise.
    #[default]
    Auto,
    ItoCorrected,
    ExactTranslation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpdeConfig {
    pub n: usize,
    pub dt: f64,
    #[serde(default = "one")]
    pub nu: f64,
    #[serde(default = "yes")]
    pub nonlinear: bool,
    #[serde(default = "yes")]
    pub noise: bool,
    #[serde(default)]
    pub stratonovich: StratonovichMode,
    #[serde(default)]
    pub strang: bool,
    #[serde(default = "half")]
    pub cfl: f64,
    #[serde(default)]
    pub sigma: SigmaBasis,
}

fn one() -> f64 {
    1.0
}
fn half() -> f64 {
    0.5
}
fn yes() -> bool {
    true
}

impl SpdeConfig {
    pub fn new(n: usize, dt: f64) -> Self {
        SpdeConfig {
            n,
            dt,
            nu: 1.0,
            nonlinear: true,
            noise: true,
            stratonovich: StratonovichMode::Auto,
            strang: false,
            cfl: 0.5,
            sigma: SigmaBasis::default(),
        }
    }

    pub fn heat_only(n: usize, dt: f64) -> Self {
        SpdeConfig {
            nonlinear: false,
            noise: false,
            ..SpdeConfig::new(n, dt)
        }
    }

    pub fn validate(&self) -> Result<()> {
        spectral::check_grid(self.n)?;
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::Config(format!("time step must be positive, got {}", self.dt)));
        }
        if !(self.nu >= 0.0 && self.nu.is_finite()) {
            return Err(Error::Config(format!("viscosity must be nonnegative, got {}", self.nu)));
        }
        if !(self.cfl > 0.0) {
            return Err(Error::Config(format!(
                "CFL constant must be positive, got {}",
                self.cfl
            )));
        }
        self.sigma.validate()?;
        if self.stratonovich == StratonovichMode::ExactTranslation && !self.sigma.all_constant() {
            return Err(Error::Config(
                "exact translation needs every noise field to be constant".into(),
            ));
        }
        Ok(())
    }

    /// Resolved discretisation of the noise term.
    pub fn noise_mode(&self) -> StratonovichMode {
        match self.stratonovich {
            StratonovichMode::Auto if self.sigma.all_constant() => StratonovichMode::ExactTranslation,
            StratonovichMode::Auto => StratonovichMode::ItoCorrected,
            m => m,
        }
    }
}

/// Stateful stepper holding the noise fields sampled on the grid and the
/// cached heat factors.
#[derive(Debug, Clone)]
pub struct SpdeSolver {
    cfg: SpdeConfig,
    /// physical `σ_k` components, `None` for constant fields
    sigma_grid: Vec<Option<[Vec<f64>; 2]>>,
    heat_dt: f64,
    heat: Vec<f64>,
}

impl SpdeSolver {
    pub fn new(cfg: SpdeConfig) -> Result<Self> {
        cfg.validate()?;
        let n = cfg.n;
        let nodes = grid_nodes(n);
        let sigma_grid = cfg
            .sigma
            .fields
            .iter()
            .map(|f| {
                if f.is_constant() {
                    return None;
                }
                let mut a = Vec::with_capacity(n * n);
                let mut b = Vec::with_capacity(n * n);
                for x1 in &nodes {
                    for x2 in &nodes {
                        let s = f.eval(*x1, *x2);
                        a.push(s[0]);
                        b.push(s[1]);
                    }
                }
                Some([a, b])
            })
            .collect();
        Ok(SpdeSolver {
            cfg,
            sigma_grid,
            heat_dt: f64::NAN,
            heat: Vec::new(),
        })
    }

    pub fn config(&self) -> &SpdeConfig {
        &self.cfg
    }

    fn heat_factors(&mut self, dt: f64) -> &[f64] {
        if self.heat_dt != dt {
            let n = self.cfg.n;
            let nu = self.cfg.nu;
            self.heat = (0..n * n)
                .map(|j| {
                    let (a, b) = (mode_of(j / n, n) as f64, mode_of(j % n, n) as f64);
                    (-nu * (a * a + b * b) * dt).exp()
                })
                .collect();
            self.heat_dt = dt;
        }
        &self.heat
    }

    /// Dealiased `K*v·∇v` and the largest velocity magnitude on the grid.
    fn nonlinear_term(&self, v: &SpectralField) -> Result<(SpectralField, f64)> {
        let n = self.cfg.n;
        let k = dealias_cutoff(n);
        let vk = v.truncated(k);
        let [u1, u2] = vk.biot_savart_convolve()?;
        let (u1, u2) = (u1.to_physical(), u2.to_physical());
        let [g1, g2] = vk.gradient();
        let (g1, g2) = (g1.to_physical(), g2.to_physical());
        let mut umax: f64 = 0.0;
        let prod: Vec<f64> = (0..n * n)
            .map(|j| {
                umax = umax.max(u1[j].hypot(u2[j]));
                u1[j] * g1[j] + u2[j] * g2[j]
            })
            .collect();
        let mut out = SpectralField::from_physical(n, &prod)?.truncated(k);
        out.coeffs_mut()[0] = Complex64::new(0.0, 0.0);
        Ok((out, umax))
    }

    fn deterministic(&mut self, v: &SpectralField, dt: f64) -> Result<SpectralField> {
        let mut out = v.clone();
        if self.cfg.nonlinear {
            let (nl, umax) = self.nonlinear_term(v)?;
            let bound = if umax > 0.0 {
                self.cfg.cfl / (self.cfg.n as f64 * umax)
            } else {
                f64::INFINITY
            };
            if dt > bound {
                return Err(Error::StepSize { dt, bound });
            }
            for (a, b) in out.coeffs_mut().iter_mut().zip(nl.coeffs()) {
                *a -= dt * b;
            }
        }
        let heat = self.heat_factors(dt).to_vec();
        for (a, h) in out.coeffs_mut().iter_mut().zip(&heat) {
            *a *= *h;
        }
        Ok(out)
    }

    /// `σ_k·∇w`, exact for constant `σ_k`, dealiased otherwise.
    fn transport(&self, k: usize, w: &SpectralField) -> Result<SpectralField> {
        let n = self.cfg.n;
        let mut out = match (&self.cfg.sigma.fields[k], &self.sigma_grid[k]) {
            (SigmaField::Constant { vector }, _) => {
                let [g1, g2] = w.gradient();
                g1.scaled(vector[0]).add(&g2.scaled(vector[1]))?
            }
            (_, Some([s1, s2])) => {
                let kk = dealias_cutoff(n);
                let [g1, g2] = w.truncated(kk).gradient();
                let (g1, g2) = (g1.to_physical(), g2.to_physical());
                let prod: Vec<f64> = (0..n * n).map(|j| s1[j] * g1[j] + s2[j] * g2[j]).collect();
                SpectralField::from_physical(n, &prod)?.truncated(kk)
            }
            _ => unreachable!("non-constant field without a grid sample"),
        };
        out.coeffs_mut()[0] = Complex64::new(0.0, 0.0);
        Ok(out)
    }

    /// `½ Σ_k σ_k·∇(σ_k·∇v)`.
    pub fn strat_correction(&self, v: &SpectralField) -> Result<SpectralField> {
        let mut acc = SpectralField::zeros(self.cfg.n)?;
        for k in 0..self.cfg.sigma.d() {
            let once = self.transport(k, v)?;
            acc = acc.add(&self.transport(k, &once)?)?;
        }
        Ok(acc.scaled(0.5))
    }

    fn noise(&self, v: &SpectralField, dw: &[f64], dt: f64) -> Result<SpectralField> {
        match self.cfg.noise_mode() {
            StratonovichMode::ExactTranslation => {
                let s = self.cfg.sigma.displacement(0.0, 0.0, dw);
                Ok(v.translated(s))
            }
            _ => {
                let mut inc = self.strat_correction(v)?.scaled(dt);
                for (k, w) in dw.iter().enumerate() {
                    inc = inc.sub(&self.transport(k, v)?.scaled(*w))?;
                }
                inc.coeffs_mut()[0] = Complex64::new(0.0, 0.0);
                v.add(&inc)
            }
        }
    }

    /// One step of length `dt` with common increments `dw`.
    pub fn step(&mut self, v: &SpectralField, dw: &[f64], dt: f64) -> Result<SpectralField> {
        if !v.is_real() {
            return Err(Error::Validation("the vorticity must be real".into()));
        }
        if v.n() != self.cfg.n {
            return Err(Error::GridMismatch(format!(
                "field grid {} vs solver grid {}",
                v.n(),
                self.cfg.n
            )));
        }
        let noisy = self.cfg.noise && self.cfg.sigma.d() > 0;
        if noisy && dw.len() != self.cfg.sigma.d() {
            return Err(Error::Config(format!(
                "{} increments for {} noise fields",
                dw.len(),
                self.cfg.sigma.d()
            )));
        }
        if let Some(w) = dw.iter().find(|w| !w.is_finite()) {
            return Err(Error::Numerical {
                t: v.time(),
                message: format!("non-finite increment {w}"),
            });
        }
        let mut out = if !noisy {
            self.deterministic(v, dt)?
        } else if self.cfg.strang {
            let half: Vec<f64> = dw.iter().map(|w| 0.5 * w).collect();
            let a = self.noise(v, &half, 0.5 * dt)?;
            let b = self.deterministic(&a, dt)?;
            self.noise(&b, &half, 0.5 * dt)?
        } else {
            let a = self.deterministic(v, dt)?;
            self.noise(&a, dw, dt)?
        };
        // keep the mean bit-identical whatever the increments did to it
        out.coeffs_mut()[0] = v.coeffs()[0];
        out.set_time(v.time() + dt);
        if out.coeffs().iter().any(|c| !(c.re.is_finite() && c.im.is_finite())) {
            return Err(Error::Numerical {
                t: out.time(),
                message: "vorticity became non-finite".into(),
            });
        }
        Ok(out)
    }
}

/// One step with a freshly built solver.
pub fn step(v: &SpectralField, dw: &[f64], cfg: &SpdeConfig) -> Result<SpectralField> {
    SpdeSolver::new(cfg.clone())?.step(v, dw, cfg.dt)
}

/// `½ Σ_k σ_k·∇(σ_k·∇v)` on the grid of `v`.
pub fn strat_correction(v: &SpectralField, basis: &SigmaBasis) -> Result<SpectralField> {
    let mut cfg = SpdeConfig::new(v.n(), 1.0);
    cfg.sigma = basis.clone();
    SpdeSolver::new(cfg)?.strat_correction(v)
}

/// Per-step solution diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DiagnosticsRow {
    pub t: f64,
    pub min: f64,
    pub max: f64,
    pub l2: f64,
    /// `‖v‖_{H^k}` for `k = 1..4`
    pub h: [f64; 4],
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DiagnosticsLog {
    pub rows: Vec<DiagnosticsRow>,
}

impl DiagnosticsLog {
    pub const CSV_HEADER: &'static str = "t,min,max,l2,h1,h2,h3,h4";

    pub fn write_csv<W: Write>(&self, w: &mut W) -> Result<()> {
        writeln!(w, "{}", Self::CSV_HEADER)?;
        for r in &self.rows {
            writeln!(
                w,
                "{},{:e},{:e},{:e},{:e},{:e},{:e},{:e}",
                r.t, r.min, r.max, r.l2, r.h[0], r.h[1], r.h[2], r.h[3]
            )?;
        }
        Ok(())
    }

    /// Largest excursion of the logged extrema outside `[lo, hi]`.
    pub fn max_excursion(&self, lo: f64, hi: f64) -> f64 {
        self.rows
            .iter()
            .map(|r| (lo - r.min).max(r.max - hi).max(0.0))
            .fold(0.0, f64::max)
    }

    /// Largest increase of the `L²` norm between consecutive rows.
    pub fn max_l2_increase(&self) -> f64 {
        self.rows
            .windows(2)
            .map(|w| w[1].l2 - w[0].l2)
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Sobolev weights `(1+|m|²)^k`, `k = 1..4`, laid out like the coefficients.
fn sobolev_weights(n: usize) -> Vec<[f64; 4]> {
    (0..n * n)
        .map(|j| {
            let (a, b) = (mode_of(j / n, n) as f64, mode_of(j % n, n) as f64);
            let w = 1.0 + a * a + b * b;
            [w, w * w, w * w * w, w * w * w * w]
        })
        .collect()
}

pub fn diagnostics(v: &SpectralField) -> DiagnosticsRow {
    diagnostics_with(v, &sobolev_weights(v.n()))
}

fn diagnostics_with(v: &SpectralField, weights: &[[f64; 4]]) -> DiagnosticsRow {
    let phys = v.to_physical();
    let min = phys.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = phys.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut l2 = 0.0;
    let mut h = [0.0; 4];
    for (c, w) in v.coeffs().iter().zip(weights) {
        let a = c.norm_sqr();
        l2 += a;
        for k in 0..4 {
            h[k] += w[k] * a;
        }
    }
    DiagnosticsRow {
        t: v.time(),
        min,
        max,
        l2: l2.sqrt(),
        h: h.map(f64::sqrt),
    }
}

/// Snapshots at the requested steps plus the per-step log.
#[derive(Debug, Clone)]
pub struct SpdeRun {
    pub snapshots: Vec<SpectralField>,
    pub log: DiagnosticsLog,
    pub steps: usize,
}

/// Steps `v0` along the time grid of `paths`, keeping a snapshot at `t = 0`,
/// every `output_every` steps and at the end.
pub fn run(v0: &SpectralField, paths: &NoisePaths, cfg: &SpdeConfig, output_every: usize) -> Result<SpdeRun> {
    let mut solver = SpdeSolver::new(cfg.clone())?;
    if cfg.noise && paths.d() != cfg.sigma.d() {
        return Err(Error::Config(format!(
            "noise paths carry {} common components, the basis has {}",
            paths.d(),
            cfg.sigma.d()
        )));
    }
    if output_every == 0 {
        return Err(Error::Config("output interval must be at least one step".into()));
    }
    let weights = sobolev_weights(cfg.n);
    let mut v = v0.clone().with_time(paths.grid().times()[0]);
    let mut log = DiagnosticsLog {
        rows: vec![diagnostics_with(&v, &weights)],
    };
    let mut snapshots = vec![v.clone()];
    let steps = paths.intervals();
    let empty: [f64; 0] = [];
    for j in 0..steps {
        let dw = if cfg.noise { paths.common_step(j) } else { &empty[..] };
        v = solver.step(&v, dw, paths.grid().dt(j))?;
        // pin the clock to the grid rather than accumulating dt
        v.set_time(paths.grid().times()[j + 1]);
        log.rows.push(diagnostics_with(&v, &weights));
        if (j + 1) % output_every == 0 || j + 1 == steps {
            snapshots.push(v.clone());
        }
    }
    Ok(SpdeRun { snapshots, log, steps })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::{make_paths, SeedTree, TimeGrid};

    #[test]
    fn sigma_examples() {
        let b = SigmaBasis::new(vec![SigmaField::Stream {
            terms: vec![
                StreamTerm {
                    amplitude: 1.0,
                    mode: [1, 0],
                    phase: 0.0,
                },
                StreamTerm {
                    amplitude: -1.0,
                    mode: [0, 1],
                    phase: 0.0,
                },
            ],
        }]);
        let (x1, x2) = (0.4, -1.2);
        let s = b.fields[0].eval(x1, x2);
        assert!((s[0] - x2.sin()).abs() < 1e-15 && (s[1] - x1.sin()).abs() < 1e-15);
        let a = b.fields[0].self_advection(std::f64::consts::FRAC_PI_2, 0.0);
        assert!((a[0] - 1.0).abs() < 1e-15 && a[1].abs() < 1e-15);
        // divergence of the closed-form Jacobian vanishes
        let j = b.fields[0].jacobian(0.3, 0.9);
        assert!((j[0][0] + j[1][1]).abs() < 1e-15);
    }

    #[test]
    fn strat_correction_examples() {
        let n = 32;
        let v = SpectralField::from_fn(n, |x1, _| x1.sin()).unwrap();
        let c = strat_correction(&v, &SigmaBasis::new(vec![SigmaField::constant(1.0, 0.0)])).unwrap();
        let expect = v.scaled(-0.5);
        let diff = c.sub(&expect).unwrap().l2_norm();
        assert!(diff < 1e-14);
        let k = SpectralField::from_fn(n, |_, _| 2.0).unwrap();
        let c = strat_correction(&k, &SigmaBasis::default_pair()).unwrap();
        assert!(c.l2_norm() < 1e-15);
    }

    #[test]
    fn strat_correction_matches_closed_form_for_stream_field() {
        // σ = (sin x₂, sin x₁), v = cos x₁:
        // σ·∇v = -sin x₂ sin x₁, σ·∇(σ·∇v) = -sin x₂ cos x₁ sin x₂ - sin x₁ sin x₁ cos x₂
        let n = 64;
        let basis = SigmaBasis::new(vec![SigmaField::Stream {
            terms: vec![
                StreamTerm {
                    amplitude: 1.0,
                    mode: [1, 0],
                    phase: 0.0,
                },
                StreamTerm {
                    amplitude: -1.0,
                    mode: [0, 1],
                    phase: 0.0,
                },
            ],
        }]);
        let v = SpectralField::from_fn(n, |x1, _| x1.cos()).unwrap();
        let c = strat_correction(&v, &basis).unwrap().to_physical();
        let nodes = grid_nodes(n);
        for (a, x1) in nodes.iter().enumerate() {
            for (b, x2) in nodes.iter().enumerate() {
                let e = 0.5 * (-x2.sin().powi(2) * x1.cos() - x1.sin().powi(2) * x2.cos());
                assert!((c[a * n + b] - e).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn heat_decay_is_exact() {
        let n = 16;
        let mut v = SpectralField::zeros(n).unwrap();
        v.set_real_mode(1, 0, Complex64::new(1.0, 0.0));
        v.set_real_mode(2, -3, Complex64::new(0.5, 0.25));
        let cfg = SpdeConfig::heat_only(n, 1e-3);
        let paths = make_paths(&SeedTree::new(0), &TimeGrid::uniform(1e-3, 1000).unwrap(), 0, 0);
        let out = run(&v, &paths, &cfg, 1000).unwrap();
        let last = out.snapshots.last().unwrap();
        assert!((last.time() - 1.0).abs() < 1e-15);
        // a thousand rounded factors: relative error of a few 1e-13
        assert!((last.coeff(1, 0).re - (-1f64).exp()).abs() < 1e-12);
        assert!((last.coeff(1, 0).re - 0.367879).abs() < 1e-6);
        let e = Complex64::new(0.5, 0.25) * (-13f64).exp();
        assert!((last.coeff(2, -3) - e).norm() < 1e-12 * e.norm());
    }

    fn smooth_initial(n: usize) -> SpectralField {
        SpectralField::from_fn(n, |a, b| {
            1.0 + 0.3 * a.cos() + 0.2 * (a + 2.0 * b).sin() + 0.1 * (3.0 * b).cos()
        })
        .unwrap()
    }

    #[test]
    fn constant_sigma_translation_matches_shift_oracle() {
        let n = 32;
        let v0 = SpectralField::from_fn(n, |a, b| 1.0 + 0.4 * a.cos() + 0.2 * b.sin()).unwrap();
        let mut cfg = SpdeConfig::new(n, 1e-3);
        cfg.nonlinear = false;
        cfg.sigma = SigmaBasis::new(vec![SigmaField::constant(0.7, -0.3)]);
        let grid = TimeGrid::uniform(1e-3, 200).unwrap();
        let paths = make_paths(&SeedTree::new(5), &grid, 1, 0);
        let out = run(&v0, &paths, &cfg, 200).unwrap();
        let w: f64 = paths.common_increments().iter().sum();
        let t = grid.final_time();
        let heat = v0.map_modes(|a, b| Complex64::new((-((a * a + b * b) as f64) * t).exp(), 0.0));
        let oracle = heat.translated([0.7 * w, -0.3 * w]);
        let diff = out.snapshots.last().unwrap().sub(&oracle).unwrap();
        assert!(diff.sobolev_norm(spectral::SobolevOrder::new(1.0)).unwrap() < 1e-10);
    }

    #[test]
    fn mean_is_bit_exact_and_runs_are_deterministic() {
        let n = 32;
        let v0 = smooth_initial(n);
        let mut cfg = SpdeConfig::new(n, 1e-3);
        cfg.sigma = SigmaBasis::default_pair();
        let paths = make_paths(&SeedTree::new(9), &TimeGrid::uniform(1e-3, 300).unwrap(), 2, 0);
        let a = run(&v0, &paths, &cfg, 50).unwrap();
        let b = run(&v0, &paths, &cfg, 50).unwrap();
        for s in &a.snapshots {
            assert_eq!(s.coeff(0, 0), v0.coeff(0, 0));
        }
        assert_eq!(a.snapshots, b.snapshots);
        assert_eq!(a.log, b.log);
        assert_eq!(a.snapshots.len(), 7);
    }

    #[test]
    fn deterministic_l2_non_increasing_and_max_principle() {
        let n = 32;
        let v0 = smooth_initial(n);
        let mut cfg = SpdeConfig::new(n, 1e-3);
        cfg.noise = false;
        let paths = make_paths(&SeedTree::new(1), &TimeGrid::uniform(1e-3, 500).unwrap(), 0, 0);
        let out = run(&v0, &paths, &cfg, 500).unwrap();
        assert!(out.log.max_l2_increase() <= 1e-8);
        let r0 = out.log.rows[0];
        assert!(out.log.max_excursion(r0.min, r0.max) <= 1e-3);
    }

    #[test]
    fn transport_noise_nearly_conserves_l2() {
        let n = 32;
        let v0 = smooth_initial(n);
        let mut cfg = SpdeConfig::new(n, 1e-4);
        cfg.nonlinear = false;
        cfg.nu = 0.0;
        cfg.sigma = SigmaBasis::new(vec![SigmaField::constant(0.7, -0.3), SigmaField::constant(0.1, 0.5)]);
        let paths = make_paths(&SeedTree::new(1), &TimeGrid::uniform(1e-4, 2000).unwrap(), 2, 0);
        let out = run(&v0, &paths, &cfg, 2000).unwrap();
        let l0 = out.log.rows[0].l2;
        for r in &out.log.rows {
            assert!(r.l2 <= l0 * (1.0 + 1e-6 * r.t.max(1e-300)) + 1e-13);
        }
    }

    #[test]
    fn cfl_violation_reports_bound() {
        let n = 32;
        let v0 = SpectralField::from_fn(n, |a, _| 1.0 + 50.0 * a.cos()).unwrap();
        let mut cfg = SpdeConfig::new(n, 0.1);
        cfg.noise = false;
        match step(&v0, &[], &cfg) {
            Err(Error::StepSize { dt, bound }) => assert!(dt == 0.1 && bound < 0.1),
            other => panic!("expected step-size error, got {other:?}"),
        }
    }

    #[test]
    fn config_errors() {
        let mut cfg = SpdeConfig::new(24, 1e-3);
        assert!(matches!(SpdeSolver::new(cfg.clone()), Err(Error::Config(_))));
        cfg.n = 16;
        cfg.stratonovich = StratonovichMode::ExactTranslation;
        cfg.sigma = SigmaBasis::default_pair();
        assert!(SpdeSolver::new(cfg.clone()).is_err());
        cfg.stratonovich = StratonovichMode::Auto;
        assert_eq!(cfg.noise_mode(), StratonovichMode::ItoCorrected);
        let v = SpectralField::zeros(16).unwrap();
        let paths = make_paths(&SeedTree::new(1), &TimeGrid::uniform(1e-3, 2).unwrap(), 1, 0);
        assert!(matches!(run(&v, &paths, &cfg, 1), Err(Error::Config(_))));
    }

    #[test]
    fn strang_and_lie_agree_to_first_order() {
        let n = 32;
        let v0 = smooth_initial(n);
        let mut cfg = SpdeConfig::new(n, 1e-4);
        cfg.sigma = SigmaBasis::default_pair();
        let paths = make_paths(&SeedTree::new(3), &TimeGrid::uniform(1e-4, 500).unwrap(), 2, 0);
        let a = run(&v0, &paths, &cfg, 500).unwrap();
        cfg.strang = true;
        let b = run(&v0, &paths, &cfg, 500).unwrap();
        let d = a.snapshots[1].sub(&b.snapshots[1]).unwrap().l2_norm();
        assert!(d < 1e-2, "{d}");
    }
}
