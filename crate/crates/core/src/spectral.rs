//! Periodic fields on a uniform `n × n` grid and their Fourier coefficients.
//!
//! Grid nodes are `x_j = -π + j·2π/n`; physical values are stored row-major
//! with the `x₁` index outermost (`values[j₁·n + j₂]`). Coefficients follow
//! the synthesis convention `v(x) = Σ_m v̂(m) e^{im·x}`, so `v̂(0)` is the
//! mean of `v` over the torus and Parseval reads
//! `n⁻² Σ_j |v_j|² = Σ_m |v̂(m)|²`. All `L²`/`Hˢ` norms are taken with
//! respect to the normalised measure `dx/(2π)²`.
//!
//! Mode `m` lives at storage index `k = m mod n` per axis, so the stored
//! range is `[-n/2, n/2)²`. Odd multipliers (derivatives, Biot-Savart,
//! translation) zero the unpaired Nyquist modes to keep real fields real.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::{Arc, Mutex, OnceLock};

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::binio;
use crate::error::{Error, Result};
use crate::torus::TWO_PI;

/// Forward/inverse plans for one grid size.
pub struct Fft2 {
    n: usize,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Fft2 {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Fft2").field("n", &self.n).finish()
    }
}

/// Shared plan for grid size `n` (must be a power of two).
pub fn plan(n: usize) -> Result<Arc<Fft2>> {
    check_grid(n)?;
    static PLANS: OnceLock<Mutex<HashMap<usize, Arc<Fft2>>>> = OnceLock::new();
    let mut map = PLANS.get_or_init(|| Mutex::new(HashMap::new())).lock().unwrap();
    Ok(map
        .entry(n)
        .or_insert_with(|| {
            let mut planner = FftPlanner::new();
            Arc::new(Fft2 {
                n,
                fwd: planner.plan_fft_forward(n),
                inv: planner.plan_fft_inverse(n),
            })
        })
        .clone())
}

pub fn check_grid(n: usize) -> Result<()> {
    if n < 2 || !n.is_power_of_two() {
        return Err(Error::Config(format!("grid size must be a power of two ≥ 2, got {n}")));
    }
    Ok(())
}

fn transpose(buf: &mut [Complex64], n: usize) {
    for a in 0..n {
        for b in (a + 1)..n {
            buf.swap(a * n + b, b * n + a);
        }
    }
}

impl Fft2 {
    pub fn n(&self) -> usize {
        self.n
    }

    fn run(&self, fft: &Arc<dyn Fft<f64>>, buf: &mut [Complex64]) {
        fft.process(buf);
        transpose(buf, self.n);
        fft.process(buf);
        transpose(buf, self.n);
    }

    /// Physical values to synthesis coefficients, in place.
    pub fn forward(&self, buf: &mut [Complex64]) {
        self.run(&self.fwd, buf);
        let n = self.n;
        let scale = 1.0 / (n * n) as f64;
        for k1 in 0..n {
            for k2 in 0..n {
                let s = if (k1 + k2) % 2 == 0 { scale } else { -scale };
                buf[k1 * n + k2] *= s;
            }
        }
    }

    /// Synthesis coefficients to physical values, in place.
    pub fn inverse(&self, buf: &mut [Complex64]) {
        let n = self.n;
        for k1 in 0..n {
            for k2 in 0..n {
                if (k1 + k2) % 2 == 1 {
                    buf[k1 * n + k2] = -buf[k1 * n + k2];
                }
            }
        }
        self.run(&self.inv, buf);
    }
}

/// Integer mode for storage index `k` on an `n`-point axis.
#[inline]
pub fn mode_of(k: usize, n: usize) -> i32 {
    if k < n / 2 {
        k as i32
    } else {
        k as i32 - n as i32
    }
}

/// Storage index of mode `m`; `m` must lie in `[-n/2, n/2)`.
#[inline]
pub fn index_of(m: i32, n: usize) -> usize {
    m.rem_euclid(n as i32) as usize
}

/// Largest `|m|` per axis kept by the 2/3 rule: the biggest `K` with `3K < n`.
pub fn dealias_cutoff(n: usize) -> i32 {
    ((n - 1) / 3) as i32
}

/// Order and cutoff for `‖f‖²_{Hˢ} = Σ_{‖m‖∞ ≤ cutoff} (1+|m|²)ˢ |f̂(m)|²`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SobolevOrder {
    pub s: f64,
    /// Defaults to the grid Nyquist `n/2`.
    pub cutoff: Option<usize>,
}

impl SobolevOrder {
    pub fn new(s: f64) -> Self {
        SobolevOrder { s, cutoff: None }
    }

    pub fn with_cutoff(s: f64, cutoff: usize) -> Self {
        SobolevOrder {
            s,
            cutoff: Some(cutoff),
        }
    }
}

/// A scalar field held by its Fourier coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralField {
    n: usize,
    coeffs: Vec<Complex64>,
    t: f64,
    real: bool,
}

impl SpectralField {
    pub fn zeros(n: usize) -> Result<Self> {
        check_grid(n)?;
        Ok(SpectralField {
            n,
            coeffs: vec![Complex64::new(0.0, 0.0); n * n],
            t: 0.0,
            real: true,
        })
    }

    /// Transform of real physical values.
    pub fn from_physical(n: usize, values: &[f64]) -> Result<Self> {
        let fft = plan(n)?;
        if values.len() != n * n {
            return Err(Error::GridMismatch(format!(
                "expected {} values, got {}",
                n * n,
                values.len()
            )));
        }
        let mut buf: Vec<Complex64> = values.iter().map(|v| Complex64::new(*v, 0.0)).collect();
        fft.forward(&mut buf);
        Ok(SpectralField {
            n,
            coeffs: buf,
            t: 0.0,
            real: true,
        })
    }

    /// Samples `f` at the grid nodes and transforms.
    pub fn from_fn(n: usize, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        let x = grid_nodes(n);
        let mut values = Vec::with_capacity(n * n);
        for a in &x {
            for b in &x {
                values.push(f(*a, *b));
            }
        }
        SpectralField::from_physical(n, &values)
    }

    pub fn from_coeffs(n: usize, coeffs: Vec<Complex64>, real: bool) -> Result<Self> {
        check_grid(n)?;
        if coeffs.len() != n * n {
            return Err(Error::GridMismatch(format!(
                "expected {} coefficients, got {}",
                n * n,
                coeffs.len()
            )));
        }
        Ok(SpectralField {
            n,
            coeffs,
            t: 0.0,
            real,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn time(&self) -> f64 {
        self.t
    }

    pub fn with_time(mut self, t: f64) -> Self {
        self.t = t;
        self
    }

    pub fn set_time(&mut self, t: f64) {
        self.t = t;
    }

    pub fn is_real(&self) -> bool {
        self.real
    }

    pub fn coeffs(&self) -> &[Complex64] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [Complex64] {
        &mut self.coeffs
    }

    pub fn coeff(&self, m1: i32, m2: i32) -> Complex64 {
        self.coeffs[index_of(m1, self.n) * self.n + index_of(m2, self.n)]
    }

    pub fn set_coeff(&mut self, m1: i32, m2: i32, c: Complex64) {
        let n = self.n;
        self.coeffs[index_of(m1, n) * n + index_of(m2, n)] = c;
    }

    /// Sets `v̂(m) = c` and `v̂(-m) = conj(c)`.
    pub fn set_real_mode(&mut self, m1: i32, m2: i32, c: Complex64) {
        self.set_coeff(m1, m2, c);
        self.set_coeff(-m1, -m2, c.conj());
    }

    pub fn mean(&self) -> Complex64 {
        self.coeffs[0]
    }

    /// Largest `|v̂(-m) - conj(v̂(m))|` over the stored modes.
    pub fn hermitian_defect(&self) -> f64 {
        let n = self.n;
        let mut worst: f64 = 0.0;
        for k1 in 0..n {
            for k2 in 0..n {
                let a = self.coeffs[k1 * n + k2];
                let b = self.coeffs[((n - k1) % n) * n + (n - k2) % n];
                worst = worst.max((b - a.conj()).norm());
            }
        }
        worst
    }

    fn require_real(&self, op: &str) -> Result<()> {
        if !self.real {
            return Err(Error::Validation(format!("{op} needs a real-valued field")));
        }
        Ok(())
    }

    fn require_same_grid(&self, other: &SpectralField) -> Result<()> {
        if self.n != other.n {
            return Err(Error::GridMismatch(format!("{} vs {}", self.n, other.n)));
        }
        Ok(())
    }

    /// Physical values at the grid nodes (real part).
    pub fn to_physical(&self) -> Vec<f64> {
        let fft = plan(self.n).expect("grid validated at construction");
        let mut buf = self.coeffs.clone();
        fft.inverse(&mut buf);
        buf.into_iter().map(|c| c.re).collect()
    }

    pub fn to_physical_complex(&self) -> Vec<Complex64> {
        let fft = plan(self.n).expect("grid validated at construction");
        let mut buf = self.coeffs.clone();
        fft.inverse(&mut buf);
        buf
    }

    /// Exact evaluation of the mode sum at an arbitrary point.
    pub fn eval(&self, x1: f64, x2: f64) -> f64 {
        let n = self.n;
        let mut acc = Complex64::new(0.0, 0.0);
        for k1 in 0..n {
            let e1 = Complex64::from_polar(1.0, mode_of(k1, n) as f64 * x1);
            for k2 in 0..n {
                let e2 = Complex64::from_polar(1.0, mode_of(k2, n) as f64 * x2);
                acc += self.coeffs[k1 * n + k2] * e1 * e2;
            }
        }
        acc.re
    }

    /// Applies a per-mode multiplier `f(m₁, m₂)`.
    pub fn map_modes(&self, f: impl Fn(i32, i32) -> Complex64) -> SpectralField {
        let n = self.n;
        let mut out = self.clone();
        for k1 in 0..n {
            let m1 = mode_of(k1, n);
            for k2 in 0..n {
                out.coeffs[k1 * n + k2] *= f(m1, mode_of(k2, n));
            }
        }
        out
    }

    fn is_nyquist(&self, m1: i32, m2: i32) -> bool {
        let h = -(self.n as i32 / 2);
        m1 == h || m2 == h
    }

    /// `√(Σ_{‖m‖∞ ≤ cutoff} (1+|m|²)ˢ |f̂(m)|²)`.
    pub fn sobolev_norm(&self, order: SobolevOrder) -> Result<f64> {
        self.require_real("sobolev_norm")?;
        let cutoff = order.cutoff.unwrap_or(self.n / 2);
        if cutoff > self.n / 2 {
            return Err(Error::Config(format!("cutoff {cutoff} exceeds Nyquist {}", self.n / 2)));
        }
        let c = cutoff as i32;
        let n = self.n;
        let mut acc = 0.0;
        for k1 in 0..n {
            let m1 = mode_of(k1, n);
            if m1.abs() > c {
                continue;
            }
            for k2 in 0..n {
                let m2 = mode_of(k2, n);
                if m2.abs() > c {
                    continue;
                }
                let w = if order.s == 0.0 {
                    1.0
                } else {
                    (1.0 + (m1 * m1 + m2 * m2) as f64).powf(order.s)
                };
                acc += w * self.coeffs[k1 * n + k2].norm_sqr();
            }
        }
        Ok(acc.sqrt())
    }

    pub fn l2_norm(&self) -> f64 {
        self.coeffs.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt()
    }

    /// `(∂₁f, ∂₂f)` via the multipliers `i m₁`, `i m₂`.
    pub fn gradient(&self) -> [SpectralField; 2] {
        let d1 = self.map_modes(|a, b| {
            if self.is_nyquist(a, b) {
                0.0.into()
            } else {
                Complex64::new(0.0, a as f64)
            }
        });
        let d2 = self.map_modes(|a, b| {
            if self.is_nyquist(a, b) {
                0.0.into()
            } else {
                Complex64::new(0.0, b as f64)
            }
        });
        [d1, d2]
    }

    /// `Δf` via `-|m|²`.
    pub fn laplacian(&self) -> SpectralField {
        self.map_modes(|a, b| Complex64::new(-((a * a + b * b) as f64), 0.0))
    }

    /// `K * f` with `(K*f)^(m) = i m⊥ |m|⁻² f̂(m)` and zero mean.
    pub fn biot_savart_convolve(&self) -> Result<[SpectralField; 2]> {
        self.require_real("biot_savart_convolve")?;
        let mult = |a: i32, b: i32, comp: usize| -> Complex64 {
            if (a == 0 && b == 0) || self.is_nyquist(a, b) {
                return 0.0.into();
            }
            let inv = 1.0 / (a * a + b * b) as f64;
            // m⊥ = (m₂, -m₁)
            match comp {
                0 => Complex64::new(0.0, b as f64 * inv),
                _ => Complex64::new(0.0, -(a as f64) * inv),
            }
        };
        Ok([
            self.map_modes(|a, b| mult(a, b, 0)),
            self.map_modes(|a, b| mult(a, b, 1)),
        ])
    }

    /// Copy with every mode outside `|m₁|, |m₂| ≤ k` zeroed.
    pub fn truncated(&self, k: i32) -> SpectralField {
        let n = self.n;
        let mut out = self.clone();
        for k1 in 0..n {
            for k2 in 0..n {
                if mode_of(k1, n).abs() > k || mode_of(k2, n).abs() > k {
                    out.coeffs[k1 * n + k2] = 0.0.into();
                }
            }
        }
        out
    }

    /// Field translated by `shift`: `f(x - shift)`, i.e. `f̂(m) e^{-im·shift}`.
    pub fn translated(&self, shift: [f64; 2]) -> SpectralField {
        self.map_modes(|a, b| {
            if self.is_nyquist(a, b) {
                0.0.into()
            } else {
                Complex64::from_polar(1.0, -(a as f64 * shift[0] + b as f64 * shift[1]))
            }
        })
    }

    pub fn scaled(&self, s: f64) -> SpectralField {
        let mut out = self.clone();
        for c in &mut out.coeffs {
            *c *= s;
        }
        out
    }

    pub fn add(&self, other: &SpectralField) -> Result<SpectralField> {
        self.require_same_grid(other)?;
        let mut out = self.clone();
        for (a, b) in out.coeffs.iter_mut().zip(&other.coeffs) {
            *a += *b;
        }
        out.real = self.real && other.real;
        Ok(out)
    }

    pub fn sub(&self, other: &SpectralField) -> Result<SpectralField> {
        self.add(&other.scaled(-1.0))
    }

    pub fn to_snapshot(&self) -> Result<FieldSnapshot> {
        self.require_real("snapshot")?;
        Ok(FieldSnapshot {
            n: self.n,
            t: self.t,
            real: true,
            values: self.to_physical(),
        })
    }

    pub fn from_snapshot(s: &FieldSnapshot) -> Result<Self> {
        Ok(SpectralField::from_physical(s.n, &s.values)?.with_time(s.t))
    }
}

/// Spectral divergence `i m₁ û₁ + i m₂ û₂`.
pub fn divergence(u: &[SpectralField; 2]) -> Result<SpectralField> {
    u[0].require_same_grid(&u[1])?;
    let d1 = u[0].map_modes(|a, _| Complex64::new(0.0, a as f64));
    let d2 = u[1].map_modes(|_, b| Complex64::new(0.0, b as f64));
    d1.add(&d2)
}

/// Pointwise product of the physical fields of `a` and `b`, with 2/3-rule
/// dealiasing on the inputs and the result.
pub fn dealiased_product(a: &SpectralField, b: &SpectralField) -> Result<SpectralField> {
    a.require_same_grid(b)?;
    let n = a.n;
    let k = dealias_cutoff(n);
    let pa = a.truncated(k).to_physical();
    let pb = b.truncated(k).to_physical();
    let prod: Vec<f64> = pa.iter().zip(&pb).map(|(x, y)| x * y).collect();
    Ok(SpectralField::from_physical(n, &prod)?.truncated(k))
}

/// `u·∇v`, dealiased by the 2/3 rule.
pub fn advect_term(v: &SpectralField, u: &[SpectralField; 2]) -> Result<SpectralField> {
    v.require_real("advect_term")?;
    u[0].require_same_grid(v)?;
    u[1].require_same_grid(v)?;
    let n = v.n;
    let k = dealias_cutoff(n);
    let [g1, g2] = v.truncated(k).gradient();
    let (g1, g2) = (g1.to_physical(), g2.to_physical());
    let u1 = u[0].truncated(k).to_physical();
    let u2 = u[1].truncated(k).to_physical();
    let prod: Vec<f64> = (0..n * n).map(|j| u1[j] * g1[j] + u2[j] * g2[j]).collect();
    Ok(SpectralField::from_physical(n, &prod)?.truncated(k).with_time(v.t))
}

/// Grid node coordinates `-π + j·2π/n`.
pub fn grid_nodes(n: usize) -> Vec<f64> {
    (0..n)
        .map(|j| -std::f64::consts::PI + j as f64 * TWO_PI / n as f64)
        .collect()
}

/// Physical snapshot of a real field, as persisted on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldSnapshot {
    pub n: usize,
    pub t: f64,
    pub real: bool,
    pub values: Vec<f64>,
}

impl FieldSnapshot {
    /// Header `n` (u64), `t` (f64), real flag (u64), then `n²` row-major
    /// little-endian doubles.
    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        binio::put_u64(w, self.n as u64)?;
        binio::put_f64(w, self.t)?;
        binio::put_u64(w, self.real as u64)?;
        binio::put_f64s(w, &self.values)
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let n = binio::to_usize(binio::get_u64(r)?, "n")?;
        check_grid(n).map_err(|e| Error::Format(e.to_string()))?;
        let t = binio::get_f64(r)?;
        let real = match binio::get_u64(r)? {
            0 => false,
            1 => true,
            other => return Err(Error::Format(format!("bad real flag {other}"))),
        };
        let values = binio::get_f64s(r, n * n)?;
        binio::expect_eof(r)?;
        Ok(FieldSnapshot { n, t, real, values })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        FieldSnapshot::read_from(&mut BufReader::new(File::open(path)?))
    }
}
