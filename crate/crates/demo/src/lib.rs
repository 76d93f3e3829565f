//! Browser bindings: kernel tables, a stepping field and a stepping vortex
//! ensemble.

use wasm_bindgen::prelude::*;

use vortexlab::harness::InitialDensity;
use vortexlab::kernels::{KernelSpec, TorusKernel};
use vortexlab::noise::{sample_initial, sample_intensities, IntensityLaw, NoisePaths, SeedTree, TimeGrid};
use vortexlab::particles::{ParticleConfig, ParticleEnsemble, ParticleSystem};
use vortexlab::spde::{SigmaBasis, SpdeConfig, SpdeSolver};
use vortexlab::spectral::{grid_nodes, SpectralField};
use vortexlab::{Error, TorusPoint};

fn js(e: Error) -> JsError {
    JsError::new(&e.to_string())
}

/// `[g, k1, k2]` at the nodes of a `points` grid, row-major in `(x1, x2)`,
/// concatenated.
#[wasm_bindgen]
pub fn kernel_grid(modes: usize, epsilon: f64, points: usize) -> Result<Vec<f64>, JsError> {
    let eps = (epsilon > 0.0).then_some(epsilon);
    let kernel = TorusKernel::new(KernelSpec::new(modes, eps).map_err(js)?).map_err(js)?;
    let nodes = grid_nodes(points);
    let cells = points * points;
    let mut out = vec![0.0; 3 * cells];
    for (a, x1) in nodes.iter().enumerate() {
        for (b, x2) in nodes.iter().enumerate() {
            let x = TorusPoint::new(*x1, *x2);
            let (g, k) = match eps {
                Some(_) => (
                    kernel.green_regularized(x).map_err(js)?,
                    kernel.biot_savart_regularized(x).map_err(js)?,
                ),
                None => (kernel.green_series(x), kernel.biot_savart_series(x)),
            };
            let i = a * points + b;
            out[i] = g;
            out[cells + i] = k[0];
            out[2 * cells + i] = k[1];
        }
    }
    Ok(out)
}

/// Chunks of common noise are drawn on demand from consecutive replicas of
/// the seed tree.
struct Chunks {
    seed: SeedTree,
    dt: f64,
    d: usize,
    next: u64,
}

impl Chunks {
    fn take(&mut self, steps: usize, n: usize) -> Result<NoisePaths, JsError> {
        let grid = TimeGrid::uniform(self.dt, steps).map_err(js)?;
        let ids = vortexlab::noise::StreamIds {
            common: self.next,
            replica: self.next,
        };
        self.next += 1;
        Ok(NoisePaths::generate(&self.seed, &grid, self.d, n, ids))
    }
}

/// Vorticity field under transport noise.
#[wasm_bindgen]
pub struct FieldDemo {
    solver: SpdeSolver,
    v: SpectralField,
    chunks: Chunks,
}

#[wasm_bindgen]
impl FieldDemo {
    #[wasm_bindgen(constructor)]
    pub fn new(n: usize, dt: f64, noise: bool, seed: u64) -> Result<FieldDemo, JsError> {
        let mut cfg = SpdeConfig::new(n, dt);
        cfg.noise = noise;
        cfg.sigma = if noise {
            SigmaBasis::default_pair()
        } else {
            SigmaBasis::default()
        };
        let d = cfg.sigma.d();
        let solver = SpdeSolver::new(cfg).map_err(js)?;
        let v = InitialDensity::default().field(n, 1.0).map_err(js)?;
        Ok(FieldDemo {
            solver,
            v,
            chunks: Chunks {
                seed: SeedTree::new(seed),
                dt,
                d,
                next: 0,
            },
        })
    }

    pub fn step(&mut self, steps: usize) -> Result<(), JsError> {
        let paths = self.chunks.take(steps, 0)?;
        for j in 0..steps {
            let dw = if self.solver.config().noise {
                paths.common_step(j)
            } else {
                &[]
            };
            let t = self.v.time() + paths.grid().dt(j);
            self.v = self.solver.step(&self.v, dw, paths.grid().dt(j)).map_err(js)?;
            self.v.set_time(t);
        }
        Ok(())
    }

    pub fn time(&self) -> f64 {
        self.v.time()
    }

    /// Physical values, row-major in `(x1, x2)`.
    pub fn values(&self) -> Vec<f64> {
        self.v.to_physical()
    }
}

/// A regularised vortex ensemble.
#[wasm_bindgen]
pub struct ParticleDemo {
    sys: ParticleSystem,
    e: ParticleEnsemble,
    chunks: Chunks,
}

#[wasm_bindgen]
impl ParticleDemo {
    #[wasm_bindgen(constructor)]
    pub fn new(n: usize, modes: usize, epsilon: f64, dt: f64, noise: bool, seed: u64) -> Result<ParticleDemo, JsError> {
        let mut cfg = ParticleConfig::new(epsilon, dt, modes);
        cfg.common_noise = noise;
        cfg.individual_noise = noise;
        cfg.sigma = if noise {
            SigmaBasis::default_pair()
        } else {
            SigmaBasis::default()
        };
        let d = cfg.sigma.d();
        let sys = ParticleSystem::new(cfg).map_err(js)?;
        let tree = SeedTree::new(seed);
        let density = InitialDensity::default().density(64).map_err(js)?;
        let x0 = sample_initial(&tree, 0, &density, n).map_err(js)?;
        let xi = sample_intensities(&tree, 0, &IntensityLaw::default(), n)
            .map_err(js)?
            .values;
        let e = ParticleEnsemble::new(x0, xi).map_err(js)?;
        Ok(ParticleDemo {
            sys,
            e,
            chunks: Chunks {
                seed: tree,
                dt,
                d,
                next: 1,
            },
        })
    }

    pub fn step(&mut self, steps: usize) -> Result<(), JsError> {
        let n = self.e.len();
        let paths = self.chunks.take(steps, n)?;
        let cfg = self.sys.config();
        for j in 0..steps {
            let dw = if cfg.common_noise { paths.common_step(j) } else { &[] };
            let db = if cfg.individual_noise {
                paths.individual_step(j)
            } else {
                &[]
            };
            self.e = self.sys.step(&self.e, dw, db, paths.grid().dt(j)).map_err(js)?;
        }
        Ok(())
    }

    pub fn time(&self) -> f64 {
        self.e.time()
    }

    /// `x1, x2, ξ` per vortex.
    pub fn state(&self) -> Vec<f64> {
        self.e
            .positions()
            .iter()
            .zip(self.e.intensities())
            .flat_map(|(p, xi)| [p.x1, p.x2, *xi])
            .collect()
    }
}
