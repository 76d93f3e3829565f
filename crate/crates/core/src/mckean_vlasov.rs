//! Copies `Y_i` driven by the velocity `K * v_t` of a precomputed field
//! trajectory, with the same individual and common noise as the particles.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::noise::NoisePaths;
use crate::spde::SigmaBasis;
use crate::spectral::SpectralField;
use crate::torus::TorusPoint;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Velocity coefficients of field snapshots, ready for pointwise synthesis.
///
/// Only modes in the upper half plane are kept; the velocity at `x` is
/// `Σ 2 Re(û(m) e^{im·x})` over them. Modes that vanish in every snapshot
/// are dropped.
#[derive(Debug, Clone)]
pub struct FieldTrajectory {
    n: usize,
    times: Vec<f64>,
    modes: Vec<(i32, i32)>,
    reach: usize,
    coeffs: Vec<Vec<[Complex64; 2]>>,
}

impl FieldTrajectory {
    pub fn new(snapshots: &[SpectralField]) -> Result<Self> {
        let first = snapshots
            .first()
            .ok_or_else(|| Error::Validation("trajectory needs at least one snapshot".into()))?;
        let n = first.n();
        let mut times = Vec::with_capacity(snapshots.len());
        let mut vel = Vec::with_capacity(snapshots.len());
        for s in snapshots {
            if s.n() != n {
                return Err(Error::GridMismatch(format!(
                    "snapshot on a {} grid, expected {n}",
                    s.n()
                )));
            }
            if let Some(&last) = times.last() {
                if !(s.time() > last) {
                    return Err(Error::Validation(format!(
                        "snapshot times must increase strictly, got {} after {last}",
                        s.time()
                    )));
                }
            }
            times.push(s.time());
            vel.push(s.biot_savart_convolve()?);
        }
        let k = (n / 2) as i32;
        let mut modes = Vec::new();
        for m1 in 0..k {
            for m2 in (1 - k)..k {
                if m1 == 0 && m2 <= 0 {
                    continue;
                }
                let live = vel.iter().any(|u| {
                    u[0].coeff(m1, m2) != Complex64::new(0.0, 0.0) || u[1].coeff(m1, m2) != Complex64::new(0.0, 0.0)
                });
                if live {
                    modes.push((m1, m2));
                }
            }
        }
        let reach = modes
            .iter()
            .map(|&(a, b)| a.unsigned_abs().max(b.unsigned_abs()) as usize)
            .max()
            .unwrap_or(0);
        let coeffs = vel
            .iter()
            .map(|u| {
                modes
                    .iter()
                    .map(|&(a, b)| [u[0].coeff(a, b) * 2.0, u[1].coeff(a, b) * 2.0])
                    .collect()
            })
            .collect();
        Ok(FieldTrajectory {
            n,
            times,
            modes,
            reach,
            coeffs,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn span(&self) -> (f64, f64) {
        (self.times[0], *self.times.last().expect("non-empty"))
    }

    /// Bracketing snapshots and the weight of the later one.
    fn locate(&self, t: f64) -> Result<(usize, usize, f64)> {
        let (start, end) = self.span();
        if !(t >= start && t <= end) {
            return Err(Error::OutOfRange { t, start, end });
        }
        match self.times.binary_search_by(|s| s.total_cmp(&t)) {
            Ok(i) => Ok((i, i, 0.0)),
            Err(i) => {
                let (a, b) = (self.times[i - 1], self.times[i]);
                Ok((i - 1, i, (t - a) / (b - a)))
            }
        }
    }

    fn blended(&self, t: f64) -> Result<Vec<[Complex64; 2]>> {
        let (a, b, w) = self.locate(t)?;
        if a == b {
            return Ok(self.coeffs[a].clone());
        }
        Ok(self.coeffs[a]
            .iter()
            .zip(&self.coeffs[b])
            .map(|(p, q)| [p[0] * (1.0 - w) + q[0] * w, p[1] * (1.0 - w) + q[1] * w])
            .collect())
    }

    fn synth(&self, c: &[[Complex64; 2]], x: TorusPoint, e1: &mut [Complex64], e2: &mut [Complex64]) -> [f64; 2] {
        let r = self.reach;
        let z1 = Complex64::from_polar(1.0, x.x1);
        let z2 = Complex64::from_polar(1.0, x.x2);
        e1[0] = Complex64::new(1.0, 0.0);
        e2[r] = Complex64::new(1.0, 0.0);
        for m in 1..=r {
            e1[m] = e1[m - 1] * z1;
            e2[r + m] = e2[r + m - 1] * z2;
            e2[r - m] = e2[r + m].conj();
        }
        let mut u = [0.0; 2];
        for (&(a, b), cm) in self.modes.iter().zip(c) {
            let e = e1[a as usize] * e2[(b + r as i32) as usize];
            u[0] += (cm[0] * e).re;
            u[1] += (cm[1] * e).re;
        }
        u
    }

    /// `K * v_t` at `x`, blending linearly between bracketing snapshots.
    pub fn velocity_at(&self, t: f64, x: TorusPoint) -> Result<[f64; 2]> {
        let c = self.blended(t)?;
        let mut e1 = vec![Complex64::new(0.0, 0.0); self.reach + 1];
        let mut e2 = vec![Complex64::new(0.0, 0.0); 2 * self.reach + 1];
        Ok(self.synth(&c, x, &mut e1, &mut e2))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CopyConfig {
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

impl Default for CopyConfig {
    fn default() -> Self {
        CopyConfig {
            individual_noise: true,
            common_noise: true,
            sigma: SigmaBasis::default(),
        }
    }
}

/// Copy positions at the output times.
#[derive(Debug, Clone, PartialEq)]
pub struct CopyRun {
    pub times: Vec<f64>,
    pub positions: Vec<Vec<TorusPoint>>,
}

/// Euler-Maruyama for `dY = K*v_t(Y) dt + √2 dB + Σ σ_k(Y) ∘ dW^k` from
/// each point of `y0`, along the grid of `paths`. Positions are kept at the
/// start, every `output_every` steps and at the end.
pub fn run_copies(
    traj: &FieldTrajectory,
    paths: &NoisePaths,
    y0: &[TorusPoint],
    cfg: &CopyConfig,
    output_every: usize,
) -> Result<CopyRun> {
    if output_every == 0 {
        return Err(Error::Config("output interval must be at least one step".into()));
    }
    cfg.sigma.validate()?;
    let n = y0.len();
    if cfg.individual_noise && paths.n() != n {
        return Err(Error::Config(format!(
            "paths carry {} individual streams for {n} copies",
            paths.n()
        )));
    }
    let common = cfg.common_noise && cfg.sigma.d() > 0;
    if common && paths.d() != cfg.sigma.d() {
        return Err(Error::Config(format!(
            "paths carry {} common components, basis has {}",
            paths.d(),
            cfg.sigma.d()
        )));
    }
    let grid = paths.grid();
    let (start, end) = traj.span();
    let (g0, g1) = (grid.times()[0], grid.final_time());
    if g0 < start || g1 > end {
        return Err(Error::Config(format!(
            "noise grid [{g0}, {g1}] leaves the trajectory span [{start}, {end}]"
        )));
    }
    let steps = paths.intervals();
    let mut out_steps = vec![0];
    out_steps.extend((1..=steps).filter(|j| j % output_every == 0 || *j == steps));
    let times: Vec<f64> = out_steps.iter().map(|&j| grid.times()[j]).collect();
    let coeffs: Vec<Vec<[Complex64; 2]>> = (0..steps)
        .map(|j| traj.blended(grid.times()[j]))
        .collect::<Result<_>>()?;

    let sqrt2 = std::f64::consts::SQRT_2;
    let one = |i: usize| -> Result<Vec<TorusPoint>> {
        let mut e1 = vec![Complex64::new(0.0, 0.0); traj.reach + 1];
        let mut e2 = vec![Complex64::new(0.0, 0.0); 2 * traj.reach + 1];
        let mut y = TorusPoint::new(y0[i].x1, y0[i].x2);
        let mut kept = Vec::with_capacity(out_steps.len());
        kept.push(y);
        for j in 0..steps {
            let dt = grid.dt(j);
            let u = traj.synth(&coeffs[j], y, &mut e1, &mut e2);
            let mut d = [u[0] * dt, u[1] * dt];
            if cfg.individual_noise {
                let db = paths.individual_step(j);
                d[0] += sqrt2 * db[2 * i];
                d[1] += sqrt2 * db[2 * i + 1];
            }
            if common {
                let s = cfg.sigma.displacement(y.x1, y.x2, paths.common_step(j));
                let c = cfg.sigma.strat_drift(y.x1, y.x2);
                d[0] += s[0] + c[0] * dt;
                d[1] += s[1] + c[1] * dt;
            }
            if !(d[0].is_finite() && d[1].is_finite()) {
                return Err(Error::Numerical {
                    t: grid.times()[j],
                    message: format!("copy {i} left the torus"),
                });
            }
            y = y.shifted(d[0], d[1]);
            if (j + 1) % output_every == 0 || j + 1 == steps {
                kept.push(y);
            }
        }
        Ok(kept)
    };
    #[cfg(feature = "parallel")]
    let per_copy: Vec<Vec<TorusPoint>> = (0..n).into_par_iter().map(one).collect::<Result<_>>()?;
    #[cfg(not(feature = "parallel"))]
    let per_copy: Vec<Vec<TorusPoint>> = (0..n).map(one).collect::<Result<_>>()?;

    let positions = (0..times.len())
        .map(|k| per_copy.iter().map(|c| c[k]).collect())
        .collect();
    Ok(CopyRun { times, positions })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::{make_paths, NoisePaths, SeedTree, TimeGrid};
    use crate::spde::SigmaField;

    fn cos_field(t: f64, amp: f64) -> SpectralField {
        SpectralField::from_fn(16, |x1, _| amp * x1.cos()).unwrap().with_time(t)
    }

    #[test]
    fn velocity_examples() {
        let flat = FieldTrajectory::new(&[SpectralField::from_fn(16, |_, _| 3.0).unwrap()]).unwrap();
        assert_eq!(flat.velocity_at(0.0, TorusPoint::new(0.4, 1.0)).unwrap(), [0.0, 0.0]);

        let one = FieldTrajectory::new(&[cos_field(0.0, 2.0)]).unwrap();
        let u = one
            .velocity_at(0.0, TorusPoint::new(std::f64::consts::FRAC_PI_2, 0.3))
            .unwrap();
        assert!(u[0].abs() < 1e-14 && (u[1] - 2.0).abs() < 1e-14);
        let x = TorusPoint::new(-0.7, 2.0);
        let u = one.velocity_at(0.0, x).unwrap();
        assert!((u[1] - 2.0 * x.x1.sin()).abs() < 1e-14);
    }

    #[test]
    fn blending_in_time() {
        let traj = FieldTrajectory::new(&[cos_field(0.0, 2.0), cos_field(0.1, 4.0), cos_field(0.2, 1.0)]).unwrap();
        let x = TorusPoint::new(1.0, 0.0);
        let at = traj.velocity_at(0.1, x).unwrap();
        let snap = FieldTrajectory::new(&[cos_field(0.1, 4.0)])
            .unwrap()
            .velocity_at(0.1, x)
            .unwrap();
        assert_eq!(at, snap);
        let mid = traj.velocity_at(0.05, x).unwrap();
        assert!((mid[1] - 3.0 * x.x1.sin()).abs() < 1e-14);
        assert!(matches!(traj.velocity_at(0.25, x), Err(Error::OutOfRange { .. })));
        assert!(matches!(traj.velocity_at(-1e-9, x), Err(Error::OutOfRange { .. })));
    }

    #[test]
    fn rejects_bad_trajectories() {
        assert!(FieldTrajectory::new(&[]).is_err());
        assert!(FieldTrajectory::new(&[cos_field(0.1, 1.0), cos_field(0.1, 1.0)]).is_err());
        let other = SpectralField::zeros(32).unwrap().with_time(0.2);
        assert!(FieldTrajectory::new(&[cos_field(0.1, 1.0), other]).is_err());
    }

    fn span_traj(t_end: f64) -> FieldTrajectory {
        FieldTrajectory::new(&[
            SpectralField::zeros(16).unwrap(),
            SpectralField::zeros(16).unwrap().with_time(t_end),
        ])
        .unwrap()
    }

    #[test]
    fn stationary_without_field_or_noise() {
        let traj = span_traj(0.1);
        let paths = make_paths(&SeedTree::new(1), &TimeGrid::uniform(1e-3, 100).unwrap(), 0, 0);
        let cfg = CopyConfig {
            individual_noise: false,
            common_noise: false,
            sigma: SigmaBasis::new(vec![]),
        };
        let y0 = vec![TorusPoint::new(0.5, -1.0), TorusPoint::new(2.0, 3.0)];
        let run = run_copies(&traj, &paths, &y0, &cfg, 10).unwrap();
        assert_eq!(run.times.len(), 11);
        assert!(run.positions.iter().all(|p| p == &y0));
    }

    #[test]
    fn constant_sigma_moves_copies_together() {
        let traj = span_traj(0.1);
        let paths = make_paths(&SeedTree::new(2), &TimeGrid::uniform(1e-3, 100).unwrap(), 1, 0);
        let cfg = CopyConfig {
            individual_noise: false,
            common_noise: true,
            sigma: SigmaBasis::new(vec![SigmaField::constant(0.7, -0.3)]),
        };
        let y0 = vec![TorusPoint::new(0.5, -1.0), TorusPoint::new(2.0, 3.0)];
        let run = run_copies(&traj, &paths, &y0, &cfg, 100).unwrap();
        let w: f64 = paths.common_increments().iter().sum();
        for (a, b) in run.positions[1].iter().zip(&y0) {
            let d = *a - *b;
            assert!((d.x1 - 0.7 * w).abs() < 1e-12 && (d.x2 + 0.3 * w).abs() < 1e-12);
        }
    }

    #[test]
    fn identical_streams_coincide() {
        let traj = FieldTrajectory::new(&[cos_field(0.0, 2.0), cos_field(0.1, 1.5)]).unwrap();
        let grid = TimeGrid::uniform(1e-3, 100).unwrap();
        let base = make_paths(&SeedTree::new(3), &grid, 2, 1);
        let mut ind = Vec::new();
        for j in 0..base.intervals() {
            let s = base.individual_step(j);
            ind.extend_from_slice(&[s[0], s[1], s[0], s[1]]);
        }
        let paths = NoisePaths::from_parts(3, grid, 2, 2, base.common_increments().to_vec(), ind).unwrap();
        let cfg = CopyConfig {
            sigma: SigmaBasis::default_pair(),
            ..CopyConfig::default()
        };
        let p = TorusPoint::new(0.2, 0.9);
        let run = run_copies(&traj, &paths, &[p, p], &cfg, 25).unwrap();
        for snap in &run.positions {
            assert_eq!(snap[0], snap[1]);
        }
    }

    #[test]
    fn mismatched_paths_are_config_errors() {
        let traj = span_traj(0.05);
        let long = make_paths(&SeedTree::new(4), &TimeGrid::uniform(1e-3, 100).unwrap(), 2, 2);
        let y0 = vec![TorusPoint::ORIGIN; 2];
        let cfg = CopyConfig {
            sigma: SigmaBasis::default_pair(),
            ..CopyConfig::default()
        };
        assert!(matches!(run_copies(&traj, &long, &y0, &cfg, 1), Err(Error::Config(_))));
        let short = make_paths(&SeedTree::new(4), &TimeGrid::uniform(1e-3, 10).unwrap(), 2, 3);
        assert!(matches!(run_copies(&traj, &short, &y0, &cfg, 1), Err(Error::Config(_))));
    }
}
