//! The regularised stochastic point vortex system
//! `dX_i = (1/N) Σ_{j≠i} ξ_j K_ε(X_i - X_j) dt + √2 dB_i + Σ_k σ_k(X_i) ∘ dW^k`,
//! stepped by Euler-Maruyama in Itô form.
//!
//! The drift uses the mode table of the truncated kernel. Writing
//! `S(m) = Σ_j ξ_j e^{im·X_j}`, the series part of the velocity of particle
//! `i` is `Σ_m (i m⊥/|m|²) e^{im·X_i} conj S(m) / N`, which costs `O(N M²)`
//! instead of `O(N² M²)`. Pairs closer than `ε` are then corrected from the
//! series to the cap, found through a cell list. [`drift_direct`] keeps the
//! pairwise sum as a reference.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::binio;
use crate::error::{Error, Result};
use crate::kernels::{KernelSpec, ModeShape, TorusKernel};
use crate::metrics::WeightedEmpirical;
use crate::noise::NoisePaths;
use crate::spde::SigmaBasis;
use crate::torus::{TorusPoint, TWO_PI};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Positions and frozen intensities at one instant.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleEnsemble {
    positions: Vec<TorusPoint>,
    intensities: Vec<f64>,
    t: f64,
}

impl ParticleEnsemble {
    pub fn new(positions: Vec<TorusPoint>, intensities: Vec<f64>) -> Result<Self> {
        if positions.len() != intensities.len() {
            return Err(Error::Validation(format!(
                "{} positions but {} intensities",
                positions.len(),
                intensities.len()
            )));
        }
        if let Some(x) = intensities.iter().find(|x| !x.is_finite()) {
            return Err(Error::Validation(format!("intensity {x} is not finite")));
        }
        let positions = positions.into_iter().map(|p| TorusPoint::new(p.x1, p.x2)).collect();
        Ok(ParticleEnsemble {
            positions,
            intensities,
            t: 0.0,
        })
    }

    pub fn with_time(mut self, t: f64) -> Self {
        self.t = t;
        self
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn positions(&self) -> &[TorusPoint] {
        &self.positions
    }

    pub fn intensities(&self) -> &[f64] {
        &self.intensities
    }

    pub fn time(&self) -> f64 {
        self.t
    }

    pub fn empirical(&self) -> WeightedEmpirical<'_> {
        WeightedEmpirical::new(&self.positions, &self.intensities).expect("lengths checked at construction")
    }

    /// Particle `perm[i]` of `self` becomes particle `i`.
    pub fn permuted(&self, perm: &[usize]) -> ParticleEnsemble {
        ParticleEnsemble {
            positions: perm.iter().map(|&j| self.positions[j]).collect(),
            intensities: perm.iter().map(|&j| self.intensities[j]).collect(),
            t: self.t,
        }
    }

    /// Header `N` (u64), `t` (f64), then `x₁, x₂, ξ` per particle.
    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        binio::put_u64(w, self.len() as u64)?;
        binio::put_f64(w, self.t)?;
        let mut flat = Vec::with_capacity(3 * self.len());
        for (p, xi) in self.positions.iter().zip(&self.intensities) {
            flat.extend_from_slice(&[p.x1, p.x2, *xi]);
        }
        binio::put_f64s(w, &flat)
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let n = binio::to_usize(binio::get_u64(r)?, "N")?;
        let t = binio::get_f64(r)?;
        let len = n
            .checked_mul(3)
            .ok_or_else(|| Error::Format("particle count overflows".into()))?;
        let flat = binio::get_f64s(r, len)?;
        binio::expect_eof(r)?;
        let mut positions = Vec::with_capacity(n);
        let mut intensities = Vec::with_capacity(n);
        for c in flat.chunks_exact(3) {
            positions.push(TorusPoint { x1: c[0], x2: c[1] });
            intensities.push(c[2]);
        }
        Ok(ParticleEnsemble {
            positions,
            intensities,
            t,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        ParticleEnsemble::read_from(&mut BufReader::new(File::open(path)?))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParticleConfig {
    pub epsilon: f64,
    pub dt: f64,
    pub modes: usize,
    #[serde(default)]
    pub shape: ModeShape,
    /// Output times with a smaller minimum distance are logged as warnings.
    #[serde(default)]
    pub near_pair_radius: Option<f64>,
    #[serde(default = "yes")]
    pub individual_noise: bool,
    #[serde(default = "yes")]
    pub common_noise: bool,
    #[serde(default)]
    pub sigma: SigmaBasis,
}

fn yes() -> bool {
    true
}

impl ParticleConfig {
    pub fn new(epsilon: f64, dt: f64, modes: usize) -> Self {
        ParticleConfig {
            epsilon,
            dt,
            modes,
            shape: ModeShape::Square,
            near_pair_radius: None,
            individual_noise: true,
            common_noise: true,
            sigma: SigmaBasis::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::Config(format!("time step must be positive, got {}", self.dt)));
        }
        self.kernel_spec().validate()?;
        self.sigma.validate()
    }

    pub fn kernel_spec(&self) -> KernelSpec {
        KernelSpec {
            modes: self.modes,
            epsilon: Some(self.epsilon),
            shape: self.shape,
        }
    }
}

/// Kernel tables and noise fields for stepping ensembles.
#[derive(Debug, Clone)]
pub struct ParticleSystem {
    cfg: ParticleConfig,
    kernel: TorusKernel,
}

impl ParticleSystem {
    pub fn new(cfg: ParticleConfig) -> Result<Self> {
        cfg.validate()?;
        let kernel = TorusKernel::new(cfg.kernel_spec())?;
        Ok(ParticleSystem { cfg, kernel })
    }

    pub fn config(&self) -> &ParticleConfig {
        &self.cfg
    }

    pub fn kernel(&self) -> &TorusKernel {
        &self.kernel
    }

    pub fn drift(&self, e: &ParticleEnsemble) -> Vec<[f64; 2]> {
        drift_on(&self.kernel, &e.positions, &e.intensities)
    }

    pub fn drift_direct(&self, e: &ParticleEnsemble) -> Vec<[f64; 2]> {
        drift_direct(&self.kernel, &e.positions, &e.intensities)
    }

    /// One Euler-Maruyama step: `dw` holds the `d` common increments and
    /// `db` the `2N` individual ones.
    pub fn step(&self, e: &ParticleEnsemble, dw: &[f64], db: &[f64], dt: f64) -> Result<ParticleEnsemble> {
        let n = e.len();
        let common = self.cfg.common_noise && self.cfg.sigma.d() > 0;
        if common && dw.len() != self.cfg.sigma.d() {
            return Err(Error::Config(format!(
                "{} common increments for {} fields",
                dw.len(),
                self.cfg.sigma.d()
            )));
        }
        if self.cfg.individual_noise && db.len() != 2 * n {
            return Err(Error::Config(format!(
                "{} individual increments for {n} particles",
                db.len()
            )));
        }
        let drift = self.drift(e);
        let sigma = &self.cfg.sigma;
        let sqrt2 = std::f64::consts::SQRT_2;
        let mut positions = Vec::with_capacity(n);
        for (i, (p, v)) in e.positions.iter().zip(&drift).enumerate() {
            let mut d = [v[0] * dt, v[1] * dt];
            if self.cfg.individual_noise {
                d[0] += sqrt2 * db[2 * i];
                d[1] += sqrt2 * db[2 * i + 1];
            }
            if common {
                let s = sigma.displacement(p.x1, p.x2, dw);
                let c = sigma.strat_drift(p.x1, p.x2);
                d[0] += s[0] + c[0] * dt;
                d[1] += s[1] + c[1] * dt;
            }
            if !(d[0].is_finite() && d[1].is_finite()) {
                return Err(Error::Numerical {
                    t: e.t,
                    message: format!("particle {i} at ({}, {}) got displacement {d:?}", p.x1, p.x2),
                });
            }
            positions.push(p.shifted(d[0], d[1]));
        }
        Ok(ParticleEnsemble {
            positions,
            intensities: e.intensities.clone(),
            t: e.t + dt,
        })
    }
}

/// Below this many particles the per-particle loops stay serial.
#[cfg(feature = "parallel")]
const PAR_MIN: usize = 64;

fn map_indices<T: Send>(n: usize, f: impl Fn(usize) -> T + Sync + Send) -> Vec<T> {
    #[cfg(feature = "parallel")]
    if n >= PAR_MIN {
        return (0..n).into_par_iter().map(f).collect();
    }
    (0..n).map(f).collect()
}

/// `(1/N) Σ_{j≠i} ξ_j K_ε(X_i - X_j)` by direct pairwise summation.
pub fn drift_direct(kernel: &TorusKernel, positions: &[TorusPoint], xi: &[f64]) -> Vec<[f64; 2]> {
    let n = positions.len();
    let inv = 1.0 / n.max(1) as f64;
    let one = |i: usize| {
        let mut v = [0.0; 2];
        for j in 0..n {
            if j == i {
                continue;
            }
            let k = kernel
                .biot_savart_regularized(positions[i] - positions[j])
                .expect("regularised kernel is total");
            v[0] += xi[j] * k[0];
            v[1] += xi[j] * k[1];
        }
        [v[0] * inv, v[1] * inv]
    };
    map_indices(n, one)
}

/// `e^{i m x}` for `m = 0..=big` by repeated multiplication.
fn powers(x: f64, big: usize, out: &mut [Complex64]) {
    let (s, c) = x.sin_cos();
    let z = Complex64::new(c, s);
    out[0] = Complex64::new(1.0, 0.0);
    for m in 1..=big {
        out[m] = out[m - 1] * z;
    }
}

/// Phase tables per particle: `e^{im₁x₁}` for `m₁ ∈ [0, M]` and
/// `e^{im₂x₂}` for `m₂ ∈ [-M, M]`.
struct Phases {
    big: usize,
    e1: Vec<Complex64>,
    e2: Vec<Complex64>,
}

impl Phases {
    fn new(positions: &[TorusPoint], big: usize) -> Self {
        let n = positions.len();
        let w1 = big + 1;
        let w2 = 2 * big + 1;
        let mut e1 = vec![Complex64::new(0.0, 0.0); n * w1];
        let mut e2 = vec![Complex64::new(0.0, 0.0); n * w2];
        let mut tmp = vec![Complex64::new(0.0, 0.0); w1];
        for (i, p) in positions.iter().enumerate() {
            powers(p.x1, big, &mut e1[i * w1..(i + 1) * w1]);
            powers(p.x2, big, &mut tmp);
            let row = &mut e2[i * w2..(i + 1) * w2];
            for m in 0..=big {
                row[big + m] = tmp[m];
                row[big - m] = tmp[m].conj();
            }
        }
        Phases { big, e1, e2 }
    }

    #[inline]
    fn get(&self, i: usize, m1: i32, m2: i32) -> Complex64 {
        let w1 = self.big + 1;
        let w2 = 2 * self.big + 1;
        self.e1[i * w1 + m1 as usize] * self.e2[i * w2 + (m2 + self.big as i32) as usize]
    }
}

/// `S(m) = Σ_j c_j e^{im·X_j}` over the half-plane table, summed in index order.
fn structure_factor(ph: &Phases, modes: &[(i32, i32, f64)], c: &[f64]) -> Vec<Complex64> {
    let one = |&(m1, m2, _): &(i32, i32, f64)| {
        let mut acc = Complex64::new(0.0, 0.0);
        for (j, cj) in c.iter().enumerate() {
            acc += ph.get(j, m1, m2) * cj;
        }
        acc
    };
    #[cfg(feature = "parallel")]
    if c.len() >= PAR_MIN {
        return modes.par_iter().map(one).collect();
    }
    modes.iter().map(one).collect()
}

/// Uniform cell list with cells at least `radius` wide.
struct CellList {
    cells: usize,
    start: Vec<usize>,
    members: Vec<usize>,
}

impl CellList {
    fn new(positions: &[TorusPoint], radius: f64) -> Option<Self> {
        let by_radius = (TWO_PI / radius).floor() as usize;
        let by_count = (positions.len() as f64).sqrt().ceil() as usize;
        let cells = by_radius.min(by_count);
        if cells < 3 {
            return None;
        }
        let cell_of = |p: &TorusPoint| {
            let a = (((p.x1 + std::f64::consts::PI) / TWO_PI * cells as f64) as usize).min(cells - 1);
            let b = (((p.x2 + std::f64::consts::PI) / TWO_PI * cells as f64) as usize).min(cells - 1);
            a * cells + b
        };
        let mut count = vec![0usize; cells * cells + 1];
        for p in positions {
            count[cell_of(p) + 1] += 1;
        }
        for c in 1..count.len() {
            count[c] += count[c - 1];
        }
        let start = count.clone();
        let mut fill = count;
        let mut members = vec![0usize; positions.len()];
        for (i, p) in positions.iter().enumerate() {
            let c = cell_of(p);
            members[fill[c]] = i;
            fill[c] += 1;
        }
        Some(CellList { cells, start, members })
    }

    /// Indices in the 3×3 block of cells around `p`, in a fixed order.
    fn neighbours<'a>(&'a self, p: &TorusPoint) -> impl Iterator<Item = usize> + 'a {
        let c = self.cells;
        let a = (((p.x1 + std::f64::consts::PI) / TWO_PI * c as f64) as usize).min(c - 1);
        let b = (((p.x2 + std::f64::consts::PI) / TWO_PI * c as f64) as usize).min(c - 1);
        (0..9).flat_map(move |k| {
            let da = (a + c + k / 3 - 1) % c;
            let db = (b + c + k % 3 - 1) % c;
            let cell = da * c + db;
            self.members[self.start[cell]..self.start[cell + 1]].iter().copied()
        })
    }
}

/// Calls `f(i, j, X_i - X_j)` for every ordered pair `i ≠ j` with
/// `|X_i - X_j| ≤ radius`, grouped by `i`.
fn near_pairs(
    positions: &[TorusPoint],
    radius: f64,
    i: usize,
    cl: Option<&CellList>,
    mut f: impl FnMut(usize, TorusPoint),
) {
    let p = positions[i];
    let mut visit = |j: usize| {
        if j != i {
            let d = p - positions[j];
            if d.norm() <= radius {
                f(j, d);
            }
        }
    };
    match cl {
        Some(cl) => cl.neighbours(&p).for_each(&mut visit),
        None => (0..positions.len()).for_each(&mut visit),
    }
}

/// Drift via the structure factor plus near-pair cap corrections.
pub fn drift_on(kernel: &TorusKernel, positions: &[TorusPoint], xi: &[f64]) -> Vec<[f64; 2]> {
    let n = positions.len();
    if n == 0 {
        return Vec::new();
    }
    let big = kernel.spec().modes;
    let modes = kernel.modes();
    let ph = Phases::new(positions, big);
    let s = structure_factor(&ph, modes, xi);
    // per-mode coefficients of Im(e^{im·X_i} conj S(m)) in the two components
    let coef: Vec<(i32, i32, f64, f64, Complex64)> = modes
        .iter()
        .zip(&s)
        .map(|(&(m1, m2, w), sm)| (m1, m2, -w * m2 as f64, w * m1 as f64, sm.conj()))
        .collect();
    let eps = kernel.spec().epsilon;
    let cl = eps.and_then(|e| CellList::new(positions, e));
    let inv = 1.0 / n as f64;
    let one = |i: usize| {
        let mut v = [0.0; 2];
        for &(m1, m2, a, b, cs) in &coef {
            let im = (ph.get(i, m1, m2) * cs).im;
            v[0] += a * im;
            v[1] += b * im;
        }
        if let Some(eps) = eps {
            near_pairs(positions, eps, i, cl.as_ref(), |j, d| {
                let cap = kernel.cap_velocity(d);
                let ser = kernel.biot_savart_series(d);
                v[0] += xi[j] * (cap[0] - ser[0]);
                v[1] += xi[j] * (cap[1] - ser[1]);
            });
        }
        [v[0] * inv, v[1] * inv]
    };
    map_indices(n, one)
}

/// Smallest torus distance over pairs; `+∞` below two particles.
pub fn min_pairwise_distance(e: &ParticleEnsemble) -> f64 {
    let p = &e.positions;
    let mut best = f64::INFINITY;
    for i in 0..p.len() {
        for j in (i + 1)..p.len() {
            best = best.min(p[i].distance(&p[j]));
        }
    }
    best
}

/// `Φ_ε = Σ_{i≠j} G_ε(X_i - X_j)` through the structure factor with unit
/// weights, minus the diagonal, plus near-pair cap corrections.
pub fn interaction_potential(e: &ParticleEnsemble, kernel: &TorusKernel) -> f64 {
    let n = e.len();
    if n < 2 {
        return 0.0;
    }
    let ph = Phases::new(&e.positions, kernel.spec().modes);
    let modes = kernel.modes();
    let s = structure_factor(&ph, modes, &vec![1.0; n]);
    let mut total = 0.0;
    let mut diag = 0.0;
    for (&(_, _, w), sm) in modes.iter().zip(&s) {
        total += w * sm.norm_sqr();
        diag += w;
    }
    total -= n as f64 * diag;
    if let Some(eps) = kernel.spec().epsilon {
        let cl = CellList::new(&e.positions, eps);
        for i in 0..n {
            near_pairs(&e.positions, eps, i, cl.as_ref(), |_, d| {
                total += kernel.cap_value(d) - kernel.green_series(d);
            });
        }
    }
    total
}

/// Pairwise reference for [`interaction_potential`].
pub fn interaction_potential_direct(e: &ParticleEnsemble, kernel: &TorusKernel) -> f64 {
    let p = &e.positions;
    let mut total = 0.0;
    for i in 0..p.len() {
        for j in 0..p.len() {
            if i != j {
                total += kernel
                    .green_regularized(p[i] - p[j])
                    .expect("regularised kernel is total");
            }
        }
    }
    total
}

/// `φ = Σ_{i,j,l distinct} 1/(|X_i - X_l| |X_i - X_j|)`.
pub fn singular_functional(e: &ParticleEnsemble) -> f64 {
    let p = &e.positions;
    let n = p.len();
    let mut total = 0.0;
    for i in 0..n {
        let (mut s1, mut s2) = (0.0, 0.0);
        for j in 0..n {
            if j != i {
                let r = 1.0 / p[i].distance(&p[j]);
                s1 += r;
                s2 += r * r;
            }
        }
        total += s1 * s1 - s2;
    }
    total
}

/// Collision-monitoring quantities at one output time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ParticleDiagnostics {
    pub t: f64,
    pub min_dist: f64,
    pub phi_eps: f64,
    pub phi_singular: f64,
}

#[derive(Debug, Clone)]
pub struct ParticleRun {
    pub snapshots: Vec<ParticleEnsemble>,
    pub diagnostics: Vec<ParticleDiagnostics>,
    pub steps: usize,
}

impl ParticleRun {
    pub fn write_trajectory_csv<W: Write>(&self, w: &mut W) -> Result<()> {
        writeln!(w, "t,i,x1,x2,xi")?;
        for s in &self.snapshots {
            for (i, (p, xi)) in s.positions.iter().zip(&s.intensities).enumerate() {
                writeln!(w, "{},{},{:e},{:e},{:e}", s.t, i, p.x1, p.x2, xi)?;
            }
        }
        Ok(())
    }

    pub fn write_diagnostics_csv<W: Write>(&self, w: &mut W) -> Result<()> {
        writeln!(w, "t,min_dist,phi_eps,phi_singular")?;
        for d in &self.diagnostics {
            writeln!(w, "{},{:e},{:e},{:e}", d.t, d.min_dist, d.phi_eps, d.phi_singular)?;
        }
        Ok(())
    }
}

fn diagnose(sys: &ParticleSystem, e: &ParticleEnsemble) -> ParticleDiagnostics {
    let d = ParticleDiagnostics {
        t: e.t,
        min_dist: min_pairwise_distance(e),
        phi_eps: interaction_potential(e, &sys.kernel),
        phi_singular: if e.len() >= 3 { singular_functional(e) } else { 0.0 },
    };
    if let Some(r) = sys.cfg.near_pair_radius {
        if d.min_dist < r {
            log::warn!("t = {}: minimum pair distance {:.3e} below {r:.3e}", e.t, d.min_dist);
        }
    }
    d
}

/// Steps `e0` along the grid of `paths`, recording a snapshot and the
/// collision diagnostics at `t = 0`, every `output_every` steps and at the
/// end. Diagnostics can be switched off for large sweeps.
pub fn run(
    e0: &ParticleEnsemble,
    paths: &NoisePaths,
    sys: &ParticleSystem,
    output_every: usize,
    with_diagnostics: bool,
) -> Result<ParticleRun> {
    if output_every == 0 {
        return Err(Error::Config("output interval must be at least one step".into()));
    }
    let cfg = &sys.cfg;
    if cfg.individual_noise && paths.n() != e0.len() {
        return Err(Error::Config(format!(
            "paths carry {} individual streams for {} particles",
            paths.n(),
            e0.len()
        )));
    }
    if cfg.common_noise && paths.d() != cfg.sigma.d() {
        return Err(Error::Config(format!(
            "paths carry {} common components, basis has {}",
            paths.d(),
            cfg.sigma.d()
        )));
    }
    let mut e = e0.clone().with_time(paths.grid().times()[0]);
    let mut snapshots = vec![e.clone()];
    let mut diagnostics = Vec::new();
    if with_diagnostics {
        diagnostics.push(diagnose(sys, &e));
    }
    let steps = paths.intervals();
    for j in 0..steps {
        let dw = if cfg.common_noise { paths.common_step(j) } else { &[] };
        let db = if cfg.individual_noise {
            paths.individual_step(j)
        } else {
            &[]
        };
        e = sys.step(&e, dw, db, paths.grid().dt(j))?;
        e.t = paths.grid().times()[j + 1];
        if (j + 1) % output_every == 0 || j + 1 == steps {
            if with_diagnostics {
                diagnostics.push(diagnose(sys, &e));
            }
            snapshots.push(e.clone());
        }
    }
    Ok(ParticleRun {
        snapshots,
        diagnostics,
        steps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::{make_paths, SeedTree, StreamIds, TimeGrid};
    use crate::spde::{SigmaField, StreamTerm};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_ensemble(n: usize, seed: u64) -> ParticleEnsemble {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pos = (0..n)
            .map(|_| TorusPoint::new(rng.random::<f64>() * TWO_PI, rng.random::<f64>() * TWO_PI))
            .collect();
        let xi = (0..n).map(|_| 0.5 + rng.random::<f64>()).collect();
        ParticleEnsemble::new(pos, xi).unwrap()
    }

    fn system(eps: f64, modes: usize) -> ParticleSystem {
        ParticleSystem::new(ParticleConfig::new(eps, 1e-3, modes)).unwrap()
    }

    #[test]
    fn drift_examples() {
        let sys = system(0.05, 8);
        let one = ParticleEnsemble::new(vec![TorusPoint::new(0.3, 0.2)], vec![1.0]).unwrap();
        assert_eq!(sys.drift(&one), vec![[0.0, 0.0]]);
        let mut cfg = ParticleConfig::new(0.01, 1e-3, 1);
        cfg.shape = ModeShape::Disk;
        let disk = ParticleSystem::new(cfg).unwrap();
        let pair = ParticleEnsemble::new(
            vec![TorusPoint::new(std::f64::consts::FRAC_PI_2, 0.0), TorusPoint::ORIGIN],
            vec![1.0, 1.0],
        )
        .unwrap();
        let v = disk.drift(&pair)[0];
        assert!(v[0].abs() < 1e-15 && (v[1] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn fast_drift_matches_direct() {
        for (n, eps, m, seed) in [(40, 0.3, 8, 1), (300, 0.2, 16, 2), (1000, 0.05, 8, 3)] {
            let sys = system(eps, m);
            let e = random_ensemble(n, seed);
            let fast = sys.drift(&e);
            let slow = sys.drift_direct(&e);
            let scale = slow.iter().map(|v| v[0].hypot(v[1])).fold(0.0, f64::max);
            for (a, b) in fast.iter().zip(&slow) {
                assert!((a[0] - b[0]).abs() < 1e-12 * scale.max(1.0), "{a:?} {b:?}");
                assert!((a[1] - b[1]).abs() < 1e-12 * scale.max(1.0));
            }
        }
    }

    #[test]
    fn close_pairs_use_the_cap() {
        // pairs well inside ε, where series and cap differ
        let sys = system(0.3, 16);
        let mut e = random_ensemble(60, 4);
        e.positions[1] = e.positions[0].shifted(0.05, -0.02);
        e.positions[2] = e.positions[0].shifted(-0.1, 0.1);
        let fast = sys.drift(&e);
        let slow = sys.drift_direct(&e);
        for (a, b) in fast.iter().zip(&slow) {
            assert!((a[0] - b[0]).abs() < 1e-11 && (a[1] - b[1]).abs() < 1e-11);
        }
    }

    #[test]
    fn drift_translation_equivariant() {
        let sys = system(0.1, 8);
        let e = random_ensemble(50, 5);
        let moved = ParticleEnsemble::new(
            e.positions.iter().map(|p| p.shifted(1.3, -0.4)).collect(),
            e.intensities.clone(),
        )
        .unwrap();
        for (a, b) in sys.drift(&e).iter().zip(&sys.drift(&moved)) {
            assert!((a[0] - b[0]).abs() < 1e-12 && (a[1] - b[1]).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_sigma_translates_exactly() {
        let mut cfg = ParticleConfig::new(0.1, 1e-3, 4);
        cfg.individual_noise = false;
        cfg.sigma = SigmaBasis::new(vec![SigmaField::constant(0.7, -0.3)]);
        let sys = ParticleSystem::new(cfg).unwrap();
        let e = ParticleEnsemble::new(vec![TorusPoint::new(0.1, 0.2)], vec![1.0]).unwrap();
        let out = sys.step(&e, &[0.05], &[], 1e-3).unwrap();
        let p = out.positions()[0];
        let want = TorusPoint::new(0.1 + 0.7 * 0.05, 0.2 - 0.3 * 0.05);
        assert!(p.distance(&want) < 1e-15);
    }

    #[test]
    fn stratonovich_drift_on_stream_field() {
        let mut cfg = ParticleConfig::new(0.1, 1e-3, 4);
        cfg.individual_noise = false;
        cfg.sigma = SigmaBasis::new(vec![SigmaField::Stream {
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
        let sys = ParticleSystem::new(cfg).unwrap();
        let x0 = TorusPoint::new(std::f64::consts::FRAC_PI_2, 0.0);
        let e = ParticleEnsemble::new(vec![x0], vec![1.0]).unwrap();
        let dt = 1e-3;
        let p = sys.step(&e, &[0.0], &[], dt).unwrap().positions()[0];
        assert!((p.x1 - (x0.x1 + 0.5 * dt)).abs() < 1e-15 && p.x2.abs() < 1e-15);
    }

    #[test]
    fn diagnostics_examples() {
        let e = ParticleEnsemble::new(
            vec![TorusPoint::ORIGIN, TorusPoint::new(1.0, 0.0), TorusPoint::new(0.0, 2.0)],
            vec![1.0; 3],
        )
        .unwrap();
        assert!((min_pairwise_distance(&e) - 1.0).abs() < 1e-15);

        let mut cfg = ParticleConfig::new(0.1, 1e-3, 1);
        cfg.shape = ModeShape::Disk;
        let disk = ParticleSystem::new(cfg).unwrap();
        let anti = ParticleEnsemble::new(
            vec![
                TorusPoint::ORIGIN,
                TorusPoint::new(-std::f64::consts::PI, -std::f64::consts::PI),
            ],
            vec![1.0; 2],
        )
        .unwrap();
        assert!((interaction_potential(&anti, disk.kernel()) + 8.0).abs() < 1e-13);

        let line = ParticleEnsemble::new(
            vec![TorusPoint::ORIGIN, TorusPoint::new(1.0, 0.0), TorusPoint::new(2.0, 0.0)],
            vec![1.0; 3],
        )
        .unwrap();
        // the six ordered triples by brute force
        let p = line.positions();
        let mut brute = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                for l in 0..3 {
                    if i != j && j != l && i != l {
                        brute += 1.0 / (p[i].distance(&p[l]) * p[i].distance(&p[j]));
                    }
                }
            }
        }
        assert!((singular_functional(&line) - brute).abs() < 1e-14);
        assert!((brute - 4.0).abs() < 1e-14);
    }

    #[test]
    fn potential_matches_direct() {
        let sys = system(0.2, 8);
        let mut e = random_ensemble(120, 7);
        e.positions[3] = e.positions[4].shifted(0.03, 0.05);
        let a = interaction_potential(&e, sys.kernel());
        let b = interaction_potential_direct(&e, sys.kernel());
        assert!((a - b).abs() < 1e-9 * b.abs().max(1.0), "{a} {b}");
    }

    #[test]
    fn determinism_and_exchangeability() {
        let n = 64;
        let mut cfg = ParticleConfig::new(0.1, 1e-3, 8);
        cfg.sigma = SigmaBasis::default_pair();
        let sys = ParticleSystem::new(cfg).unwrap();
        let e = random_ensemble(n, 8);
        let grid = TimeGrid::uniform(1e-3, 100).unwrap();
        let seed = SeedTree::new(2);
        let paths = NoisePaths::generate(&seed, &grid, 2, n, StreamIds::default());
        let a = run(&e, &paths, &sys, 50, true).unwrap();
        let b = run(&e, &paths, &sys, 50, true).unwrap();
        assert_eq!(a.snapshots, b.snapshots);

        // reverse the labels, and the individual streams with them
        let perm: Vec<usize> = (0..n).rev().collect();
        let ep = e.permuted(&perm);
        let l = paths.intervals();
        let mut ind = vec![0.0; l * n * 2];
        for j in 0..l {
            let src = paths.individual_step(j);
            for (i, &pi) in perm.iter().enumerate() {
                ind[(j * n + i) * 2] = src[pi * 2];
                ind[(j * n + i) * 2 + 1] = src[pi * 2 + 1];
            }
        }
        let pp = NoisePaths::from_parts(
            paths.master_seed(),
            grid.clone(),
            2,
            n,
            paths.common_increments().to_vec(),
            ind,
        )
        .unwrap();
        let c = run(&ep, &pp, &sys, 50, false).unwrap();
        let last_a = a.snapshots.last().unwrap();
        let last_c = c.snapshots.last().unwrap();
        for (i, &pi) in perm.iter().enumerate() {
            let d = last_c.positions()[i].distance(&last_a.positions()[pi]);
            assert!(d < 1e-10, "{d}");
        }
    }

    #[test]
    fn snapshot_round_trip() {
        let e = random_ensemble(10, 9).with_time(0.25);
        let mut buf = Vec::new();
        e.write_to(&mut buf).unwrap();
        assert_eq!(buf.len(), 16 + 30 * 8);
        assert_eq!(ParticleEnsemble::read_from(&mut buf.as_slice()).unwrap(), e);
    }

    #[test]
    fn run_checks_stream_counts() {
        let sys = system(0.1, 4);
        let e = random_ensemble(5, 1);
        let paths = make_paths(&SeedTree::new(1), &TimeGrid::uniform(1e-3, 3).unwrap(), 0, 4);
        assert!(matches!(run(&e, &paths, &sys, 1, false), Err(Error::Config(_))));
    }
}
