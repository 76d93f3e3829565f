//! Run configuration, read from TOML. Unknown keys are rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{KernelSpec, ModeShape};
use crate::mckean_vlasov::CopyConfig;
use crate::metrics::GriddedDensity;
use crate::noise::IntensityLaw;
use crate::particles::ParticleConfig;
use crate::spde::{SigmaBasis, SpdeConfig, StratonovichMode};
use crate::spectral::{check_grid, SpectralField};
use crate::torus::TWO_PI;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub master_seed: u64,
    pub t_final: f64,
    /// Particle steps between recorded output times.
    pub output_every: usize,
    #[serde(default)]
    pub spde: SpdeSection,
    #[serde(default)]
    pub particles: ParticleSection,
    #[serde(default)]
    pub noise: NoiseSection,
    #[serde(default)]
    pub intensity: IntensityLaw,
    #[serde(default)]
    pub initial: InitialDensity,
    #[serde(default)]
    pub metrics: MetricSection,
    #[serde(default)]
    pub mv: McKeanVlasovSection,
    #[serde(default)]
    pub kernel_table: KernelTableSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpdeSection {
    pub n: usize,
    pub dt: f64,
    pub nu: f64,
    pub nonlinear: bool,
    pub stratonovich: StratonovichMode,
    pub cfl: f64,
}

impl Default for SpdeSection {
    fn default() -> Self {
        SpdeSection {
            n: 64,
            dt: 1e-4,
            nu: 1.0,
            nonlinear: true,
            stratonovich: StratonovichMode::Auto,
            cfl: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ParticleSection {
    /// Particle step as a multiple of the field step.
    pub coarsen: usize,
    pub modes: usize,
    pub shape: ModeShape,
    /// Fixed `ε`; when absent `ε = epsilon_scale · 2π/(4 n)` with `n` the field grid.
    pub epsilon: Option<f64>,
    pub epsilon_scale: f64,
    pub individual_noise: bool,
    /// Particle count for `simulate-particles`.
    pub n: usize,
    pub n_list: Vec<usize>,
    pub replicas: usize,
    /// Full collision diagnostics for `simulate-particles`.
    pub diagnostics: bool,
}

impl Default for ParticleSection {
    fn default() -> Self {
        ParticleSection {
            coarsen: 10,
            modes: 8,
            shape: ModeShape::Square,
            epsilon: None,
            epsilon_scale: 1.0,
            individual_noise: true,
            n: 256,
            n_list: vec![64, 128, 256, 512, 1024],
            replicas: 64,
            diagnostics: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseSection {
    /// Switches the common noise off in the field and the particles alike.
    pub common: bool,
    pub sigma: SigmaBasis,
}

impl Default for NoiseSection {
    fn default() -> Self {
        NoiseSection {
            common: true,
            sigma: SigmaBasis::default_pair(),
        }
    }
}

/// `ρ̄₀ ∝ offset + Σ (c cos(m·x) + s sin(m·x))`, normalised to a probability
/// density in `dx`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InitialDensity {
    pub offset: f64,
    pub terms: Vec<FourierTerm>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FourierTerm {
    pub mode: [i32; 2],
    #[serde(default)]
    pub cos: f64,
    #[serde(default)]
    pub sin: f64,
}

impl Default for InitialDensity {
    fn default() -> Self {
        InitialDensity {
            offset: 1.0,
            terms: vec![
                FourierTerm {
                    mode: [1, 0],
                    cos: 0.2,
                    sin: 0.0,
                },
                FourierTerm {
                    mode: [0, 1],
                    cos: 0.0,
                    sin: 0.1,
                },
            ],
        }
    }
}

impl InitialDensity {
    /// `offset + Σ …` before normalisation.
    pub fn profile(&self, x1: f64, x2: f64) -> f64 {
        self.offset
            + self
                .terms
                .iter()
                .map(|t| {
                    let a = t.mode[0] as f64 * x1 + t.mode[1] as f64 * x2;
                    t.cos * a.cos() + t.sin * a.sin()
                })
                .sum::<f64>()
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        if !(self.offset > 0.0 && self.offset.is_finite()) {
            return Err(Error::Config(format!(
                "initial offset must be positive, got {}",
                self.offset
            )));
        }
        for t in &self.terms {
            if t.mode == [0, 0] {
                return Err(Error::Config(
                    "initial terms must not use the zero mode; set `offset`".into(),
                ));
            }
            if !(t.cos.is_finite() && t.sin.is_finite()) {
                return Err(Error::Config("initial coefficients must be finite".into()));
            }
            if 2 * t.mode[0].unsigned_abs() as usize >= n || 2 * t.mode[1].unsigned_abs() as usize >= n {
                return Err(Error::Config(format!(
                    "initial mode {:?} is not resolved on a {n} grid",
                    t.mode
                )));
            }
        }
        let nodes = crate::spectral::grid_nodes(n);
        let mut min = f64::INFINITY;
        for a in &nodes {
            for b in &nodes {
                min = min.min(self.profile(*a, *b));
            }
        }
        if !(min > 0.0) {
            return Err(Error::Config(format!(
                "initial density is not strictly positive on the grid (minimum {min})"
            )));
        }
        Ok(())
    }

    /// Vorticity `E[ξ]·(2π)²·ρ̄₀` on an `n` grid.
    pub fn field(&self, n: usize, mean_intensity: f64) -> Result<SpectralField> {
        let scale = mean_intensity / self.offset;
        SpectralField::from_fn(n, |a, b| scale * self.profile(a, b))
    }

    /// `ρ̄₀` sampled at the nodes of an `n` grid.
    pub fn density(&self, n: usize) -> Result<GriddedDensity> {
        check_grid(n)?;
        let nodes = crate::spectral::grid_nodes(n);
        let mut values = Vec::with_capacity(n * n);
        for a in &nodes {
            for b in &nodes {
                values.push(self.profile(*a, *b));
            }
        }
        let mut d = GriddedDensity::new(n, values)?;
        d.normalize()?;
        Ok(d)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricSection {
    pub s: f64,
    pub cutoff: usize,
    pub kde_grid: usize,
    /// Fixed KDE bandwidth; when absent `h = 2·2π/√N`.
    pub bandwidth: Option<f64>,
}

impl Default for MetricSection {
    fn default() -> Self {
        MetricSection {
            s: 2.75,
            cutoff: 16,
            kde_grid: 64,
            bandwidth: None,
        }
    }
}

impl MetricSection {
    pub fn bandwidth_for(&self, n: usize) -> f64 {
        self.bandwidth.unwrap_or(2.0 * TWO_PI / (n as f64).sqrt())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct McKeanVlasovSection {
    pub copies: Vec<usize>,
    pub t_check: f64,
    pub grid: usize,
    pub bandwidth: f64,
    /// Field steps between stored snapshots.
    pub snapshot_every: usize,
}

impl Default for McKeanVlasovSection {
    fn default() -> Self {
        McKeanVlasovSection {
            copies: vec![1000, 4000, 16000],
            t_check: 0.25,
            grid: 128,
            bandwidth: 0.2,
            snapshot_every: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KernelTableSection {
    pub points: usize,
    pub regularized: bool,
}

impl Default for KernelTableSection {
    fn default() -> Self {
        KernelTableSection {
            points: 32,
            regularized: false,
        }
    }
}

fn positive(name: &str, x: f64) -> Result<()> {
    if x > 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(Error::Config(format!("{name} must be positive, got {x}")))
    }
}

fn nonzero(name: &str, x: usize) -> Result<()> {
    if x > 0 {
        Ok(())
    } else {
        Err(Error::Config(format!("{name} must be at least 1")))
    }
}

impl RunConfig {
    /// Defaults with the given seed, horizon and output spacing.
    pub fn new(master_seed: u64, t_final: f64, output_every: usize) -> Self {
        RunConfig {
            master_seed,
            t_final,
            output_every,
            spde: SpdeSection::default(),
            particles: ParticleSection::default(),
            noise: NoiseSection::default(),
            intensity: IntensityLaw::default(),
            initial: InitialDensity::default(),
            metrics: MetricSection::default(),
            mv: McKeanVlasovSection::default(),
            kernel_table: KernelTableSection::default(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serialises")
    }

    /// Reads a TOML file, or the `config` entry of a JSON run manifest.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        if path.extension().is_some_and(|e| e == "json") {
            let m: super::RunManifest =
                serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
            m.config.validate()?;
            return Ok(m.config);
        }
        RunConfig::from_toml(&text)
    }

    pub fn validate(&self) -> Result<()> {
        positive("t_final", self.t_final)?;
        nonzero("output_every", self.output_every)?;
        self.spde_config().validate()?;
        self.particle_config().validate()?;
        nonzero("particles.coarsen", self.particles.coarsen)?;
        positive("particles.epsilon_scale", self.particles.epsilon_scale)?;
        nonzero("particles.replicas", self.particles.replicas)?;
        if self.particles.n_list.contains(&0) || self.particles.n == 0 {
            return Err(Error::Config("particle counts must be at least 1".into()));
        }
        let steps = self.fine_steps()?;
        if !steps.is_multiple_of(self.particles.coarsen) {
            return Err(Error::Config(format!(
                "{steps} field steps are not a multiple of particles.coarsen = {}",
                self.particles.coarsen
            )));
        }
        self.intensity.validate().map_err(|e| Error::Config(e.to_string()))?;
        if !(self.intensity.mean() > 0.0) {
            return Err(Error::Config(format!(
                "intensity law has mean {}, must be positive",
                self.intensity.mean()
            )));
        }
        self.initial.validate(self.spde.n)?;
        positive("metrics.s", self.metrics.s)?;
        check_grid(self.metrics.kde_grid)?;
        if 2 * self.metrics.cutoff >= self.spde.n {
            return Err(Error::Config(format!(
                "metrics.cutoff = {} must stay below half the field grid {}",
                self.metrics.cutoff, self.spde.n
            )));
        }
        if let Some(h) = self.metrics.bandwidth {
            positive("metrics.bandwidth", h)?;
        }
        if self.mv.copies.contains(&0) {
            return Err(Error::Config("mv.copies entries must be at least 1".into()));
        }
        positive("mv.t_check", self.mv.t_check)?;
        positive("mv.bandwidth", self.mv.bandwidth)?;
        nonzero("mv.snapshot_every", self.mv.snapshot_every)?;
        check_grid(self.mv.grid)?;
        if !self.particles.coarsen.is_multiple_of(self.mv.snapshot_every)
            && !self.mv.snapshot_every.is_multiple_of(self.particles.coarsen)
        {
            return Err(Error::Config(
                "mv.snapshot_every and particles.coarsen must divide one another".into(),
            ));
        }
        nonzero("kernel_table.points", self.kernel_table.points)?;
        Ok(())
    }

    /// Number of field steps to `t_final`.
    pub fn fine_steps(&self) -> Result<usize> {
        let steps = (self.t_final / self.spde.dt).round();
        if !((steps * self.spde.dt - self.t_final).abs() <= 1e-9 * self.t_final) || steps < 1.0 {
            return Err(Error::Config(format!(
                "t_final = {} is not a multiple of spde.dt = {}",
                self.t_final, self.spde.dt
            )));
        }
        Ok(steps as usize)
    }

    pub fn epsilon(&self) -> f64 {
        self.particles
            .epsilon
            .unwrap_or(self.particles.epsilon_scale * TWO_PI / (4.0 * self.spde.n as f64))
    }

    pub fn sigma(&self) -> SigmaBasis {
        if self.noise.common {
            self.noise.sigma.clone()
        } else {
            SigmaBasis::default()
        }
    }

    pub fn spde_config(&self) -> SpdeConfig {
        SpdeConfig {
            n: self.spde.n,
            dt: self.spde.dt,
            nu: self.spde.nu,
            nonlinear: self.spde.nonlinear,
            noise: self.noise.common,
            stratonovich: self.spde.stratonovich,
            strang: false,
            cfl: self.spde.cfl,
            sigma: self.sigma(),
        }
    }

    pub fn kernel_spec(&self) -> KernelSpec {
        KernelSpec {
            modes: self.particles.modes,
            epsilon: Some(self.epsilon()),
            shape: self.particles.shape,
        }
    }

    pub fn particle_config(&self) -> ParticleConfig {
        ParticleConfig {
            epsilon: self.epsilon(),
            dt: self.spde.dt * self.particles.coarsen as f64,
            modes: self.particles.modes,
            shape: self.particles.shape,
            near_pair_radius: Some(self.epsilon()),
            individual_noise: self.particles.individual_noise,
            common_noise: self.noise.common,
            sigma: self.sigma(),
        }
    }

    pub fn copy_config(&self) -> CopyConfig {
        CopyConfig {
            individual_noise: self.particles.individual_noise,
            common_noise: self.noise.common,
            sigma: self.sigma(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = r#"
master_seed = 11
t_final = 0.1
output_every = 20

[spde]
n = 32

[metrics]
cutoff = 8

[particles]
n_list = [16, 32, 64]
replicas = 4

[[noise.sigma]]
kind = "constant"
vector = [0.7, -0.3]

[intensity]
law = "atoms"
values = [1.0]
weights = [1.0]

[initial]
offset = 1.0
terms = [{ mode = [1, 0], cos = 0.3 }]
"#;

    #[test]
    fn parses_and_round_trips() {
        let cfg = RunConfig::from_toml(SAMPLE).unwrap();
        assert_eq!(cfg.spde.n, 32);
        assert_eq!(cfg.noise.sigma.d(), 1);
        assert_eq!(cfg.fine_steps().unwrap(), 1000);
        assert!((cfg.epsilon() - TWO_PI / 128.0).abs() < 1e-15);
        let again = RunConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(again, cfg);
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        let typo = SAMPLE.replace("replicas = 4", "replica = 4");
        assert!(matches!(RunConfig::from_toml(&typo), Err(Error::Config(_))));
        let negative = SAMPLE.replace("cos = 0.3", "cos = 1.5");
        assert!(matches!(RunConfig::from_toml(&negative), Err(Error::Config(_))));
        let ragged = SAMPLE.replace("t_final = 0.1", "t_final = 0.10005");
        assert!(RunConfig::from_toml(&ragged).is_err());
        let bad_law = SAMPLE.replace("values = [1.0]", "values = [-1.0]");
        assert!(RunConfig::from_toml(&bad_law).is_err());
    }

    #[test]
    fn initial_field_and_density_agree() {
        let init = InitialDensity::default();
        let d = init.density(32).unwrap();
        assert!((d.integral() - 1.0).abs() < 1e-12);
        let v = init.field(32, 1.5).unwrap();
        assert!((v.mean().re - 1.5).abs() < 1e-13);
        let g = GriddedDensity::from_field(&v, None, 32).unwrap();
        for (a, b) in g.values().iter().zip(d.values()) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
