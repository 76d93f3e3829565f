//! Green function and Biot-Savart kernel on the torus, truncated Fourier
//! series with unit coefficients, plus the regularised family `G_ε`, `K_ε`.
//!
//! `G(x) = Σ_{m≠0} |m|⁻² e^{im·x}` and `K = ∇⊥G = (∂₂G, -∂₁G)`, i.e.
//! `K(x) = Σ_{m≠0} i m⊥ |m|⁻² e^{im·x}` with `m⊥ = (m₂, -m₁)`. Only modes in
//! the truncation set are summed; by default the set is `0 < ‖m‖∞ ≤ M` so
//! that point evaluation and grid convolution see the same modes.
//!
//! Inside the ball `|x| ≤ ε` the regularised Green function is replaced by a
//! polynomial in `|x|²` along each ray,
//! `P(r, θ) = a₀ + B(θ)ρ + C(θ)ρ² + D(θ)ρ³` with `ρ = r²/ε²`. The constant
//! `a₀` is shared by all rays (so `G_ε` is single-valued and flat at the
//! origin); `B, C, D` match value, first and second radial derivative of
//! the series at `r = ε`. Matching along every ray makes the angular
//! derivatives agree as well, so `G_ε` is C¹ across the circle and `K_ε` is
//! continuous.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::torus::{TorusPoint, TWO_PI};

/// Shape of the retained mode set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeShape {
    /// `‖m‖∞ ≤ M`, matching the square spectral grid.
    #[default]
    Square,
    /// `|m| ≤ M`.
    Disk,
}

/// Mode cutoff and optional regularisation radius.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub modes: usize,
    pub epsilon: Option<f64>,
    #[serde(default)]
    pub shape: ModeShape,
}

impl KernelSpec {
    pub fn new(modes: usize, epsilon: Option<f64>) -> Result<Self> {
        let spec = KernelSpec {
            modes,
            epsilon,
            shape: ModeShape::Square,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn with_shape(mut self, shape: ModeShape) -> Self {
        self.shape = shape;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.modes < 1 {
            return Err(Error::Config("kernel mode cutoff must be at least 1".into()));
        }
        if let Some(eps) = self.epsilon {
            if !(eps > 0.0 && eps < 1.0) {
                return Err(Error::Config(format!(
                    "regularisation radius must lie in (0, 1), got {eps}"
                )));
            }
        }
        Ok(())
    }

    /// True when `ε` is below the resolvable scale `2π/M`, so the cap sits
    /// inside a region where the truncated series is already smooth.
    pub fn under_resolved(&self) -> bool {
        self.epsilon.is_some_and(|eps| eps < TWO_PI / self.modes as f64)
    }

    pub fn contains(&self, m1: i32, m2: i32) -> bool {
        let big = self.modes as i64;
        let (a, b) = (m1 as i64, m2 as i64);
        if a == 0 && b == 0 {
            return false;
        }
        match self.shape {
            ModeShape::Square => a.abs() <= big && b.abs() <= big,
            ModeShape::Disk => a * a + b * b <= big * big,
        }
    }

    /// Retained modes in the half plane `m₁ > 0 or (m₁ = 0, m₂ > 0)`; the
    /// other half follows by `m ↦ -m`.
    pub fn half_plane_modes(&self) -> Vec<(i32, i32)> {
        let big = self.modes as i32;
        let mut out = Vec::new();
        for m1 in 0..=big {
            for m2 in -big..=big {
                if (m1 > 0 || m2 > 0) && self.contains(m1, m2) {
                    out.push((m1, m2));
                }
            }
        }
        out
    }
}

/// Series value and derivatives up to third order at one point.
#[derive(Debug, Clone, Copy, Default)]
pub struct Jet {
    pub value: f64,
    pub grad: [f64; 2],
    /// `[∂₁₁, ∂₁₂, ∂₂₂]`
    pub hess: [f64; 3],
    /// `[∂₁₁₁, ∂₁₁₂, ∂₁₂₂, ∂₂₂₂]`
    pub third: [f64; 4],
}

impl Jet {
    fn hess_apply(&self, u: [f64; 2], v: [f64; 2]) -> f64 {
        let [h11, h12, h22] = self.hess;
        u[0] * (h11 * v[0] + h12 * v[1]) + u[1] * (h12 * v[0] + h22 * v[1])
    }

    fn third_apply(&self, u: [f64; 2], v: [f64; 2], w: [f64; 2]) -> f64 {
        let t = |a: usize, b: usize, c: usize| self.third[a + b + c];
        let mut acc = 0.0;
        for a in 0..2 {
            for b in 0..2 {
                for c in 0..2 {
                    acc += t(a, b, c) * u[a] * v[b] * w[c];
                }
            }
        }
        acc
    }
}

/// Precomputed mode table for repeated point evaluation.
#[derive(Debug, Clone)]
pub struct TorusKernel {
    spec: KernelSpec,
    /// `(m₁, m₂, 2/|m|²)` over the half plane
    modes: Vec<(i32, i32, f64)>,
    /// shared constant term of the cap, when regularised
    cap_constant: Option<f64>,
}

const CAP_DIRECTIONS: usize = 64;

impl TorusKernel {
    pub fn new(spec: KernelSpec) -> Result<Self> {
        spec.validate()?;
        if spec.under_resolved() {
            log::warn!(
                "regularisation radius {:?} is below the resolvable scale 2π/{} = {:.4}",
                spec.epsilon,
                spec.modes,
                TWO_PI / spec.modes as f64
            );
        }
        let modes = spec
            .half_plane_modes()
            .into_iter()
            .map(|(a, b)| (a, b, 2.0 / (a as f64 * a as f64 + b as f64 * b as f64)))
            .collect();
        let mut kernel = TorusKernel {
            spec,
            modes,
            cap_constant: None,
        };
        if let Some(eps) = spec.epsilon {
            // mean over directions of the three-term cap's constant
            let mut acc = 0.0;
            for k in 0..CAP_DIRECTIONS {
                let th = TWO_PI * k as f64 / CAP_DIRECTIONS as f64;
                let er = [th.cos(), th.sin()];
                let jet = kernel.jet(TorusPoint::new(eps * er[0], eps * er[1]));
                let g0 = jet.value;
                let beta = eps * (er[0] * jet.grad[0] + er[1] * jet.grad[1]);
                let gamma = eps * eps * jet.hess_apply(er, er);
                let c = (gamma - beta) / 8.0;
                let b = (beta - 4.0 * c) / 2.0;
                acc += g0 - b - c;
            }
            kernel.cap_constant = Some(acc / CAP_DIRECTIONS as f64);
        }
        Ok(kernel)
    }

    pub fn spec(&self) -> &KernelSpec {
        &self.spec
    }

    /// `(m₁, m₂, 2/|m|²)` for every half-plane mode.
    pub fn modes(&self) -> &[(i32, i32, f64)] {
        &self.modes
    }

    fn phases(&self, x: TorusPoint) -> (Vec<(f64, f64)>, Vec<(f64, f64)>) {
        let big = self.spec.modes as i32;
        let e1: Vec<(f64, f64)> = (0..=big).map(|m| (m as f64 * x.x1).sin_cos()).collect();
        let e2: Vec<(f64, f64)> = (-big..=big).map(|m| (m as f64 * x.x2).sin_cos()).collect();
        (e1, e2)
    }

    /// Truncated series `G(x)`; finite everywhere, but `x = 0` is rejected
    /// since it is the singular point of the untruncated kernel.
    pub fn green(&self, x: TorusPoint) -> Result<f64> {
        if x.norm_sq() == 0.0 {
            return Err(Error::Singularity("green function evaluated at the origin".into()));
        }
        Ok(self.green_series(x))
    }

    pub fn biot_savart(&self, x: TorusPoint) -> Result<[f64; 2]> {
        if x.norm_sq() == 0.0 {
            return Err(Error::Singularity("Biot-Savart kernel evaluated at the origin".into()));
        }
        Ok(self.biot_savart_series(x))
    }

    /// Series value without the singularity check.
    pub fn green_series(&self, x: TorusPoint) -> f64 {
        let big = self.spec.modes as i32;
        let (e1, e2) = self.phases(x);
        let mut acc = 0.0;
        for &(m1, m2, w) in &self.modes {
            let (s1, c1) = e1[m1 as usize];
            let (s2, c2) = e2[(m2 + big) as usize];
            acc += w * (c1 * c2 - s1 * s2);
        }
        acc
    }

    /// Series `∇⊥G` without the singularity check; `K(0) = 0` by oddness.
    pub fn biot_savart_series(&self, x: TorusPoint) -> [f64; 2] {
        let big = self.spec.modes as i32;
        let (e1, e2) = self.phases(x);
        let (mut k1, mut k2) = (0.0, 0.0);
        for &(m1, m2, w) in &self.modes {
            let (s1, c1) = e1[m1 as usize];
            let (s2, c2) = e2[(m2 + big) as usize];
            let s = s1 * c2 + c1 * s2;
            k1 -= w * m2 as f64 * s;
            k2 += w * m1 as f64 * s;
        }
        [k1, k2]
    }

    /// Value and derivatives of the series up to third order.
    pub fn jet(&self, x: TorusPoint) -> Jet {
        let big = self.spec.modes as i32;
        let (e1, e2) = self.phases(x);
        let mut j = Jet::default();
        for &(m1, m2, w) in &self.modes {
            let (s1, c1) = e1[m1 as usize];
            let (s2, c2) = e2[(m2 + big) as usize];
            let c = c1 * c2 - s1 * s2;
            let s = s1 * c2 + c1 * s2;
            let (a, b) = (m1 as f64, m2 as f64);
            j.value += w * c;
            j.grad[0] -= w * a * s;
            j.grad[1] -= w * b * s;
            j.hess[0] -= w * a * a * c;
            j.hess[1] -= w * a * b * c;
            j.hess[2] -= w * b * b * c;
            j.third[0] += w * a * a * a * s;
            j.third[1] += w * a * a * b * s;
            j.third[2] += w * a * b * b * s;
            j.third[3] += w * b * b * b * s;
        }
        j
    }

    /// Cap value and gradient at `x` with `0 < |x| ≤ ε`.
    fn cap(&self, x: TorusPoint, eps: f64, a0: f64) -> (f64, [f64; 2]) {
        let r = x.norm();
        if r == 0.0 {
            return (a0, [0.0, 0.0]);
        }
        let er = [x.x1 / r, x.x2 / r];
        let et = [-er[1], er[0]];
        let jet = self.jet(TorusPoint::new(eps * er[0], eps * er[1]));
        let dot = |u: [f64; 2], v: [f64; 2]| u[0] * v[0] + u[1] * v[1];

        let g0 = jet.value;
        let g1 = dot(er, jet.grad);
        let g2 = jet.hess_apply(er, er);
        let g0p = eps * dot(et, jet.grad);
        let g1p = dot(et, jet.grad) + eps * jet.hess_apply(er, et);
        let g2p = 2.0 * jet.hess_apply(et, er) + eps * jet.third_apply(er, er, et);

        let coeffs = |alpha: f64, beta: f64, gamma: f64| {
            let d = (gamma - 5.0 * beta + 8.0 * alpha) / 8.0;
            let c = (beta - 2.0 * alpha) / 2.0 - 2.0 * d;
            let b = alpha - c - d;
            (b, c, d)
        };
        let (b, c, d) = coeffs(g0 - a0, eps * g1, eps * eps * g2);
        let (bp, cp, dp) = coeffs(g0p, eps * g1p, eps * eps * g2p);

        let rho = r * r / (eps * eps);
        let value = a0 + rho * (b + rho * (c + rho * d));
        let dr = 2.0 * r / (eps * eps) * (b + 2.0 * c * rho + 3.0 * d * rho * rho);
        let dth = r / (eps * eps) * (bp + cp * rho + dp * rho * rho);
        let grad = [dr * er[0] + dth * et[0], dr * er[1] + dth * et[1]];
        (value, grad)
    }

    /// `G_ε(x)`: the series outside the ball of radius `ε`, the cap inside.
    /// Without `ε` this is the plain series (and errors at the origin).
    pub fn green_regularized(&self, x: TorusPoint) -> Result<f64> {
        match (self.spec.epsilon, self.cap_constant) {
            (Some(eps), Some(a0)) if x.norm() <= eps => Ok(self.cap(x, eps, a0).0),
            (Some(_), _) => Ok(self.green_series(x)),
            _ => self.green(x),
        }
    }

    /// `∇G_ε(x)`.
    pub fn green_regularized_gradient(&self, x: TorusPoint) -> Result<[f64; 2]> {
        match (self.spec.epsilon, self.cap_constant) {
            (Some(eps), Some(a0)) if x.norm() <= eps => Ok(self.cap(x, eps, a0).1),
            (Some(_), _) => {
                let k = self.biot_savart_series(x);
                Ok([-k[1], k[0]])
            }
            _ => {
                let k = self.biot_savart(x)?;
                Ok([-k[1], k[0]])
            }
        }
    }

    /// `K_ε = ∇⊥G_ε`.
    pub fn biot_savart_regularized(&self, x: TorusPoint) -> Result<[f64; 2]> {
        let g = self.green_regularized_gradient(x)?;
        Ok([g[1], -g[0]])
    }

    /// Inside-cap value of `K_ε`, for callers that already know `|x| ≤ ε`.
    pub(crate) fn cap_velocity(&self, x: TorusPoint) -> [f64; 2] {
        match (self.spec.epsilon, self.cap_constant) {
            (Some(eps), Some(a0)) => {
                let g = self.cap(x, eps, a0).1;
                [g[1], -g[0]]
            }
            _ => self.biot_savart_series(x),
        }
    }

    pub(crate) fn cap_value(&self, x: TorusPoint) -> f64 {
        match (self.spec.epsilon, self.cap_constant) {
            (Some(eps), Some(a0)) => self.cap(x, eps, a0).0,
            _ => self.green_series(x),
        }
    }
}

/// One-off evaluation of `G`; builds the mode table on every call.
pub fn green(x: TorusPoint, spec: &KernelSpec) -> Result<f64> {
    TorusKernel::new(KernelSpec { epsilon: None, ..*spec })?.green(x)
}

pub fn biot_savart(x: TorusPoint, spec: &KernelSpec) -> Result<[f64; 2]> {
    TorusKernel::new(KernelSpec { epsilon: None, ..*spec })?.biot_savart(x)
}

pub fn green_regularized(x: TorusPoint, spec: &KernelSpec) -> Result<f64> {
    require_epsilon(spec)?;
    TorusKernel::new(*spec)?.green_regularized(x)
}

pub fn biot_savart_regularized(x: TorusPoint, spec: &KernelSpec) -> Result<[f64; 2]> {
    require_epsilon(spec)?;
    TorusKernel::new(*spec)?.biot_savart_regularized(x)
}

fn require_epsilon(spec: &KernelSpec) -> Result<()> {
    if spec.epsilon.is_none() {
        return Err(Error::Config("regularised kernel needs a radius ε".into()));
    }
    Ok(())
}

/// Cell centres `-π + (j + ½)·2π/n`; a grid of these never hits the origin.
pub fn cell_centres(n: usize) -> Vec<f64> {
    (0..n).map(|j| -PI + (j as f64 + 0.5) * TWO_PI / n as f64).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn disk1() -> TorusKernel {
        TorusKernel::new(KernelSpec::new(1, None).unwrap().with_shape(ModeShape::Disk)).unwrap()
    }

    /// Brute-force double loop over the full mode set; independent of the
    /// half-plane table and the phase products.
    fn brute(x: TorusPoint, spec: &KernelSpec) -> (f64, [f64; 2]) {
        let big = spec.modes as i32;
        let (mut g, mut k1, mut k2) = (0.0, 0.0, 0.0);
        for m1 in -big..=big {
            for m2 in -big..=big {
                if !spec.contains(m1, m2) {
                    continue;
                }
                let n2 = (m1 * m1 + m2 * m2) as f64;
                let ph = m1 as f64 * x.x1 + m2 as f64 * x.x2;
                g += ph.cos() / n2;
                // Re(i m⊥ e^{iph}) = -m⊥ sin(ph)
                k1 += -(m2 as f64) * ph.sin() / n2;
                k2 += (m1 as f64) * ph.sin() / n2;
            }
        }
        (g, [k1, k2])
    }

    #[test]
    fn four_mode_values() {
        let k = disk1();
        // limit at the origin of 2cos x1 + 2cos x2
        assert!((k.green_series(TorusPoint::ORIGIN) - 4.0).abs() < 1e-15);
        assert!((k.green(TorusPoint::new(PI, PI)).unwrap() + 4.0).abs() < 1e-14);
        let v = k.biot_savart(TorusPoint::new(PI / 2.0, 0.0)).unwrap();
        assert!(v[0].abs() < 1e-15 && (v[1] - 2.0).abs() < 1e-15);
    }

    #[test]
    fn square_set_matches_brute_force() {
        // with ‖m‖∞ ≤ 1 the diagonal modes join: G(0) = 4 + 4·½ = 6
        let spec = KernelSpec::new(1, None).unwrap();
        let k = TorusKernel::new(spec).unwrap();
        assert!((k.green_series(TorusPoint::ORIGIN) - 6.0).abs() < 1e-14);
        let v = k.biot_savart(TorusPoint::new(PI / 2.0, 0.0)).unwrap();
        assert!(v[0].abs() < 1e-14 && (v[1] - 4.0).abs() < 1e-14);
        let spec = KernelSpec::new(9, None).unwrap();
        let k = TorusKernel::new(spec).unwrap();
        for (a, b) in [(0.3, -1.2), (2.9, 0.01), (-3.1, 3.0)] {
            let x = TorusPoint::new(a, b);
            let (g, kk) = brute(x, &spec);
            assert!((k.green(x).unwrap() - g).abs() < 1e-12);
            let v = k.biot_savart(x).unwrap();
            assert!((v[0] - kk[0]).abs() < 1e-12 && (v[1] - kk[1]).abs() < 1e-12);
        }
    }

    #[test]
    fn origin_is_singular_without_regularisation() {
        let spec = KernelSpec::new(4, None).unwrap();
        assert!(matches!(green(TorusPoint::ORIGIN, &spec), Err(Error::Singularity(_))));
        assert!(matches!(
            biot_savart(TorusPoint::ORIGIN, &spec),
            Err(Error::Singularity(_))
        ));
    }

    #[test]
    fn finite_difference_gradient() {
        let k = TorusKernel::new(KernelSpec::new(16, None).unwrap()).unwrap();
        let x = TorusPoint::new(1.0, 1.0);
        let h = 1e-4;
        let g = |a: f64, b: f64| k.green(TorusPoint::new(a, b)).unwrap();
        let d1 = (g(1.0 + h, 1.0) - g(1.0 - h, 1.0)) / (2.0 * h);
        let d2 = (g(1.0, 1.0 + h) - g(1.0, 1.0 - h)) / (2.0 * h);
        let v = k.biot_savart(x).unwrap();
        assert!((v[0] - d2).abs() < 1e-6 && (v[1] + d1).abs() < 1e-6);
    }

    #[test]
    fn regularised_equals_series_outside_cap() {
        let eps = 0.1;
        let k = TorusKernel::new(KernelSpec::new(32, Some(eps)).unwrap()).unwrap();
        let x = TorusPoint::new(2.0 * eps * 0.6, 2.0 * eps * 0.8);
        assert_eq!(k.green_regularized(x).unwrap(), k.green(x).unwrap());
        assert_eq!(k.biot_savart_regularized(x).unwrap(), k.biot_savart(x).unwrap());
        let g0 = k.green_regularized(TorusPoint::ORIGIN).unwrap();
        assert!(g0.is_finite());
        assert_eq!(k.biot_savart_regularized(TorusPoint::ORIGIN).unwrap(), [0.0, 0.0]);
    }

    #[test]
    fn cap_gradient_matches_finite_differences() {
        let eps = 0.2;
        let k = TorusKernel::new(KernelSpec::new(32, Some(eps)).unwrap()).unwrap();
        let h = 1e-6;
        for (a, b) in [(0.05, 0.02), (-0.11, 0.07), (0.0, -0.15), (0.13, 0.13)] {
            let g = |p: f64, q: f64| k.green_regularized(TorusPoint::new(p, q)).unwrap();
            let d1 = (g(a + h, b) - g(a - h, b)) / (2.0 * h);
            let d2 = (g(a, b + h) - g(a, b - h)) / (2.0 * h);
            let grad = k.green_regularized_gradient(TorusPoint::new(a, b)).unwrap();
            assert!((grad[0] - d1).abs() < 1e-5 * (1.0 + d1.abs()), "{grad:?} vs {d1}");
            assert!((grad[1] - d2).abs() < 1e-5 * (1.0 + d2.abs()), "{grad:?} vs {d2}");
        }
    }

    #[test]
    fn regularised_kernel_continuous_across_circle() {
        for eps in [0.1, 0.05, 0.3] {
            let k = TorusKernel::new(KernelSpec::new(32, Some(eps)).unwrap()).unwrap();
            for j in 0..24 {
                let th = TWO_PI * j as f64 / 24.0 + 0.1;
                let at = |r: f64| TorusPoint::new(r * th.cos(), r * th.sin());
                // one-sided differences remove the smooth variation over the
                // 2δ gap, leaving only a genuine jump
                let d = 1e-8;
                let kv = |r: f64| k.biot_savart_regularized(at(r)).unwrap();
                let (a2, a1, b1, b2) = (kv(eps - 2.0 * d), kv(eps - d), kv(eps + d), kv(eps + 2.0 * d));
                let jump = (0..2)
                    .map(|c| (b1[c] - a1[c]) - (b2[c] - b1[c]) - (a1[c] - a2[c]))
                    .fold(0.0f64, |acc, x| acc.hypot(x));
                assert!(jump < 1e-6, "eps {eps} dir {j} jump {jump}");
                let gv = |r: f64| k.green_regularized(at(r)).unwrap();
                let gjump =
                    (gv(eps + d) - gv(eps - d)) - (gv(eps + 2.0 * d) - gv(eps + d)) - (gv(eps - d) - gv(eps - 2.0 * d));
                assert!(gjump.abs() < 1e-6);
            }
        }
    }

    #[test]
    fn cap_gradient_bound() {
        // sup of |∇G_ε|·(|x| ∨ ε) over r ≤ 1 by dense sampling is about 9.6
        // (Gibbs ripples of the truncated series); frozen with headroom
        const C4: f64 = 10.0;
        for eps in [0.1, 0.05, 0.01] {
            let k = TorusKernel::new(KernelSpec::new(64, Some(eps)).unwrap()).unwrap();
            let mut worst: f64 = 0.0;
            for a in 0..48 {
                let th = TWO_PI * a as f64 / 48.0;
                let radii = (0..=60)
                    .map(|r| eps * r as f64 / 60.0)
                    .chain((1..=100).map(|r| eps + (1.0 - eps) * r as f64 / 100.0));
                for rad in radii {
                    let g = k
                        .green_regularized_gradient(TorusPoint::new(rad * th.cos(), rad * th.sin()))
                        .unwrap();
                    worst = worst.max(g[0].hypot(g[1]) * rad.max(eps));
                }
            }
            assert!(worst <= C4, "eps {eps}: {worst}");
        }
    }

    fn log_deviation(k: &TorusKernel, lo: f64, floor: f64) -> f64 {
        // sup of |-G_ε - 2π log(|x| ∨ floor)| over a radial sample of [lo, 1]
        let mut worst: f64 = 0.0;
        for a in 0..32 {
            let th = TWO_PI * a as f64 / 32.0 + 0.05;
            for r in 0..=200 {
                let rad = lo + (1.0 - lo) * r as f64 / 200.0;
                let g = k
                    .green_regularized(TorusPoint::new(rad * th.cos(), rad * th.sin()))
                    .unwrap();
                worst = worst.max((-g - TWO_PI * rad.max(floor).ln()).abs());
            }
        }
        worst
    }

    #[test]
    fn logarithmic_bounds() {
        // The truncated series saturates at the scale 1/M, so the bounds use
        // log(|x| ∨ ε ∨ 1/M) with C1 = C2 = 2π; C3 frozen from the measured
        // sup deviation.
        const C3: f64 = 10.5;
        let m = 64;
        let floor = 1.0 / m as f64;
        let plain = TorusKernel::new(KernelSpec::new(m, Some(0.001)).unwrap()).unwrap();
        let dev = log_deviation(&plain, TWO_PI / m as f64, floor);
        println!("series deviation {dev}");
        assert!(dev <= C3);
        for eps in [0.1, 0.05, 0.01] {
            let k = TorusKernel::new(KernelSpec::new(m, Some(eps)).unwrap()).unwrap();
            let dev = log_deviation(&k, 0.0, eps.max(floor));
            println!("eps {eps} deviation {dev}");
            assert!(dev <= C3);
        }
    }

    #[test]
    fn biot_savart_is_divergence_free() {
        let k = TorusKernel::new(KernelSpec::new(32, None).unwrap()).unwrap();
        let h = 1e-4;
        for j in 0..100 {
            let a = -3.0 + 6.0 * ((j * 37) % 100) as f64 / 100.0;
            let b = -3.0 + 6.0 * ((j * 61 + 13) % 100) as f64 / 100.0;
            let kv = |p: f64, q: f64| k.biot_savart(TorusPoint::new(p, q)).unwrap();
            // fourth-order central stencil; the second-order one carries an
            // O(h²M³) error that alone reaches 1e-5 at M = 32
            let d1 = |p: f64, q: f64| {
                8.0 * (kv(p + h, q)[0] - kv(p - h, q)[0]) - (kv(p + 2.0 * h, q)[0] - kv(p - 2.0 * h, q)[0])
            };
            let d2 = |p: f64, q: f64| {
                8.0 * (kv(p, q + h)[1] - kv(p, q - h)[1]) - (kv(p, q + 2.0 * h)[1] - kv(p, q - 2.0 * h)[1])
            };
            let div = (d1(a, b) + d2(a, b)) / (12.0 * h);
            assert!(div.abs() < 1e-5, "{div} at ({a}, {b})");
        }
    }

    proptest! {
        #[test]
        fn symmetries(a in -PI..PI, b in -PI..PI) {
            let k = TorusKernel::new(KernelSpec::new(32, None).unwrap()).unwrap();
            let x = TorusPoint::new(a, b);
            prop_assume!(x.norm() > 1e-9);
            let g1 = k.green(x).unwrap();
            let g2 = k.green(-x).unwrap();
            prop_assert!((g1 - g2).abs() <= 1e-14 * (1.0 + g1.abs()) * 10.0);
            let v = k.biot_savart(x).unwrap();
            let w = k.biot_savart(-x).unwrap();
            prop_assert!((v[0] + w[0]).abs() < 1e-12 && (v[1] + w[1]).abs() < 1e-12);
        }
    }
}
