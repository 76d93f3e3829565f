//! Seeded Brownian increments and initial-data sampling.
//!
//! Every random quantity in the laboratory is drawn from a substream keyed
//! by `(master seed, purpose tag, replica index, item index)`. The key is
//! hashed into a ChaCha8 key, so any substream can be opened directly
//! without advancing shared state. This is what allows the particle system,
//! the SPDE solver and the McKean-Vlasov copies to consume the *same*
//! common-noise path bit for bit while resampling everything else.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::binio;
use crate::error::{Error, Result};
use crate::metrics::GriddedDensity;
use crate::torus::{TorusPoint, TWO_PI};

/// Purpose of a random substream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StreamTag {
    CommonNoise,
    IndividualNoise,
    InitialPositions,
    Intensities,
}

impl StreamTag {
    fn code(self) -> u8 {
        match self {
            StreamTag::CommonNoise => 1,
            StreamTag::IndividualNoise => 2,
            StreamTag::InitialPositions => 3,
            StreamTag::Intensities => 4,
        }
    }
}

/// Root of the seed hierarchy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedTree {
    master_seed: u64,
}

impl SeedTree {
    pub fn new(master_seed: u64) -> Self {
        SeedTree { master_seed }
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    /// Opens the substream for `(tag, replica, index)`.
    pub fn stream(&self, tag: StreamTag, replica: u64, index: u64) -> ChaCha8Rng {
        let mut h = Sha256::new();
        h.update(b"vortexlab.seed.v1");
        h.update(self.master_seed.to_le_bytes());
        h.update([tag.code()]);
        h.update(replica.to_le_bytes());
        h.update(index.to_le_bytes());
        let digest = h.finalize();
        let mut key = [0u8; 32];
        key.copy_from_slice(&digest);
        ChaCha8Rng::from_seed(key)
    }
}

/// Strictly increasing time instants `t_0 = 0 < t_1 < ... < t_L`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    times: Vec<f64>,
}

impl TimeGrid {
    pub fn new(times: Vec<f64>) -> Result<Self> {
        if times.is_empty() {
            return Err(Error::Config("time grid needs at least one instant".into()));
        }
        if times[0] != 0.0 {
            return Err(Error::Config(format!("time grid must start at 0, got {}", times[0])));
        }
        for w in times.windows(2) {
            if !(w[1] > w[0]) || !w[1].is_finite() {
                return Err(Error::Config(format!(
                    "time grid not strictly increasing at {} -> {}",
                    w[0], w[1]
                )));
            }
        }
        Ok(TimeGrid { times })
    }

    /// `steps` intervals of width `dt`; instants are computed as `j * dt`.
    pub fn uniform(dt: f64, steps: usize) -> Result<Self> {
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(Error::Config(format!("time step must be positive, got {dt}")));
        }
        TimeGrid::new((0..=steps).map(|j| j as f64 * dt).collect())
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    /// Number of intervals `L`.
    pub fn intervals(&self) -> usize {
        self.times.len() - 1
    }

    pub fn final_time(&self) -> f64 {
        *self.times.last().unwrap()
    }

    pub fn dt(&self, j: usize) -> f64 {
        self.times[j + 1] - self.times[j]
    }

    /// Every `factor`-th instant; `L` must be divisible by `factor`.
    pub fn coarsen(&self, factor: usize) -> Result<TimeGrid> {
        if factor == 0 || !self.intervals().is_multiple_of(factor) {
            return Err(Error::Config(format!(
                "cannot coarsen {} intervals by factor {factor}",
                self.intervals()
            )));
        }
        Ok(TimeGrid {
            times: self.times.iter().step_by(factor).copied().collect(),
        })
    }
}

/// Which substreams a set of paths is drawn from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct StreamIds {
    /// Identifier of the common (environmental) path.
    pub common: u64,
    /// Replica index for the individual noises.
    pub replica: u64,
}

/// Brownian increments on a time grid: `d` common scalar paths `W^k` and
/// `n` individual planar paths `B_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoisePaths {
    master_seed: u64,
    grid: TimeGrid,
    d: usize,
    n: usize,
    /// `common[j * d + k]` is `W^k(t_{j+1}) - W^k(t_j)`.
    common: Vec<f64>,
    /// `individual[(j * n + i) * 2 + c]` is component `c` of `B_i(t_{j+1}) - B_i(t_j)`.
    individual: Vec<f64>,
}

/// Common and individual paths drawn from streams `(0, 0)`.
pub fn make_paths(seed: &SeedTree, grid: &TimeGrid, d: usize, n: usize) -> NoisePaths {
    NoisePaths::generate(seed, grid, d, n, StreamIds::default())
}

impl NoisePaths {
    pub fn generate(seed: &SeedTree, grid: &TimeGrid, d: usize, n: usize, ids: StreamIds) -> Self {
        let l = grid.intervals();
        let sqrt_dt: Vec<f64> = (0..l).map(|j| grid.dt(j).sqrt()).collect();
        let mut common = vec![0.0; l * d];
        for k in 0..d {
            let mut rng = seed.stream(StreamTag::CommonNoise, ids.common, k as u64);
            for j in 0..l {
                let z: f64 = rng.sample(StandardNormal);
                common[j * d + k] = sqrt_dt[j] * z;
            }
        }
        let individual = individual_block(seed, &sqrt_dt, n, ids.replica);
        NoisePaths {
            master_seed: seed.master_seed(),
            grid: grid.clone(),
            d,
            n,
            common,
            individual,
        }
    }

    /// Assembles paths from raw increments laid out as in [`NoisePaths::common_step`]
    /// and [`NoisePaths::individual_step`].
    pub fn from_parts(
        master_seed: u64,
        grid: TimeGrid,
        d: usize,
        n: usize,
        common: Vec<f64>,
        individual: Vec<f64>,
    ) -> Result<Self> {
        let l = grid.intervals();
        if common.len() != l * d || individual.len() != l * n * 2 {
            return Err(Error::Validation(format!(
                "expected {} common and {} individual increments, got {} and {}",
                l * d,
                l * n * 2,
                common.len(),
                individual.len()
            )));
        }
        Ok(NoisePaths {
            master_seed,
            grid,
            d,
            n,
            common,
            individual,
        })
    }

    /// Paths sharing `self`'s common increments with fresh individual
    /// noises for `replica`.
    pub fn with_individual(&self, seed: &SeedTree, replica: u64, n: usize) -> NoisePaths {
        let l = self.grid.intervals();
        let sqrt_dt: Vec<f64> = (0..l).map(|j| self.grid.dt(j).sqrt()).collect();
        NoisePaths {
            master_seed: seed.master_seed(),
            grid: self.grid.clone(),
            d: self.d,
            n,
            common: self.common.clone(),
            individual: individual_block(seed, &sqrt_dt, n, replica),
        }
    }

    /// The same common increments with no individual paths.
    pub fn common_only(&self) -> NoisePaths {
        NoisePaths {
            master_seed: self.master_seed,
            grid: self.grid.clone(),
            d: self.d,
            n: 0,
            common: self.common.clone(),
            individual: Vec::new(),
        }
    }

    /// Sums each run of `factor` consecutive increments (left to right) and
    /// keeps every `factor`-th instant.
    pub fn derive_coarse(&self, factor: usize) -> Result<NoisePaths> {
        let grid = self.grid.coarsen(factor)?;
        let lc = grid.intervals();
        let (d, n) = (self.d, self.n);
        let mut common = vec![0.0; lc * d];
        let mut individual = vec![0.0; lc * n * 2];
        for jc in 0..lc {
            for sub in 0..factor {
                let j = jc * factor + sub;
                for k in 0..d {
                    common[jc * d + k] += self.common[j * d + k];
                }
                let src = &self.individual[j * n * 2..(j + 1) * n * 2];
                let dst = &mut individual[jc * n * 2..(jc + 1) * n * 2];
                for (a, b) in dst.iter_mut().zip(src) {
                    *a += *b;
                }
            }
        }
        Ok(NoisePaths {
            master_seed: self.master_seed,
            grid,
            d,
            n,
            common,
            individual,
        })
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn intervals(&self) -> usize {
        self.grid.intervals()
    }

    /// Common increments over interval `j`, one per `k`.
    pub fn common_step(&self, j: usize) -> &[f64] {
        &self.common[j * self.d..(j + 1) * self.d]
    }

    /// Individual increments over interval `j`, laid out `[B_0, B_1, ...]`
    /// with two components each.
    pub fn individual_step(&self, j: usize) -> &[f64] {
        &self.individual[j * self.n * 2..(j + 1) * self.n * 2]
    }

    pub fn common_increments(&self) -> &[f64] {
        &self.common
    }

    pub fn individual_increments(&self) -> &[f64] {
        &self.individual
    }

    /// Cumulative common path `W^k(t_j)` at every instant (index `j * d + k`).
    pub fn common_cumulative(&self) -> Vec<f64> {
        let l = self.intervals();
        let mut out = vec![0.0; (l + 1) * self.d];
        for j in 0..l {
            for k in 0..self.d {
                out[(j + 1) * self.d + k] = out[j * self.d + k] + self.common[j * self.d + k];
            }
        }
        out
    }

    /// SHA-256 over the time grid and the common increments. Two consumers
    /// saw the same environment iff their fingerprints agree.
    pub fn common_fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.grid.times.len() as u64).to_le_bytes());
        for t in &self.grid.times {
            h.update(t.to_le_bytes());
        }
        h.update((self.d as u64).to_le_bytes());
        for w in &self.common {
            h.update(w.to_le_bytes());
        }
        hex::encode(h.finalize())
    }

    /// Binary layout: `L, d, N, master_seed` as u64, then the `L + 1`
    /// instants, the `L·d` common and `L·N·2` individual increments, all
    /// little-endian.
    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        binio::put_u64(w, self.intervals() as u64)?;
        binio::put_u64(w, self.d as u64)?;
        binio::put_u64(w, self.n as u64)?;
        binio::put_u64(w, self.master_seed)?;
        binio::put_f64s(w, &self.grid.times)?;
        binio::put_f64s(w, &self.common)?;
        binio::put_f64s(w, &self.individual)?;
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let l = binio::to_usize(binio::get_u64(r)?, "L")?;
        let d = binio::to_usize(binio::get_u64(r)?, "d")?;
        let n = binio::to_usize(binio::get_u64(r)?, "N")?;
        let master_seed = binio::get_u64(r)?;
        let times = binio::get_f64s(r, l + 1)?;
        let grid = TimeGrid::new(times).map_err(|e| Error::Format(e.to_string()))?;
        let common = binio::get_f64s(r, l * d)?;
        let individual = binio::get_f64s(r, l * n * 2)?;
        binio::expect_eof(r)?;
        Ok(NoisePaths {
            master_seed,
            grid,
            d,
            n,
            common,
            individual,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        NoisePaths::read_from(&mut BufReader::new(File::open(path)?))
    }
}

fn individual_block(seed: &SeedTree, sqrt_dt: &[f64], n: usize, replica: u64) -> Vec<f64> {
    let l = sqrt_dt.len();
    let mut individual = vec![0.0; l * n * 2];
    for i in 0..n {
        let mut rng = seed.stream(StreamTag::IndividualNoise, replica, i as u64);
        for (j, s) in sqrt_dt.iter().enumerate() {
            let z1: f64 = rng.sample(StandardNormal);
            let z2: f64 = rng.sample(StandardNormal);
            individual[(j * n + i) * 2] = s * z1;
            individual[(j * n + i) * 2 + 1] = s * z2;
        }
    }
    individual
}

/// `n` i.i.d. points from the piecewise-constant density that is constant
/// on the grid cell centred at each node.
///
/// The cell is chosen by inverse CDF over the flattened cell masses and the
/// point is then uniform inside the cell.
pub fn sample_initial(seed: &SeedTree, replica: u64, density: &GriddedDensity, n: usize) -> Result<Vec<TorusPoint>> {
    let values = density.values();
    if let Some(bad) = values.iter().position(|v| !(*v >= 0.0)) {
        return Err(Error::Validation(format!(
            "density cell {bad} is negative or NaN ({})",
            values[bad]
        )));
    }
    let integral = density.integral();
    if (integral - 1.0).abs() > 1e-10 {
        return Err(Error::Validation(format!(
            "density integrates to {integral}, expected 1"
        )));
    }
    let area = density.cell_area();
    let mut cdf = Vec::with_capacity(values.len());
    let mut acc = 0.0;
    for v in values {
        acc += v * area;
        cdf.push(acc);
    }
    let total = acc;
    let g = density.n();
    let h = TWO_PI / g as f64;
    let mut rng = seed.stream(StreamTag::InitialPositions, replica, 0);
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let u: f64 = rng.random::<f64>() * total;
        // first cell whose cumulative mass exceeds u; zero-mass cells are never chosen
        let mut cell = cdf.partition_point(|c| *c <= u);
        if cell >= cdf.len() {
            cell = cdf.len() - 1;
        }
        let (i1, i2) = (cell / g, cell % g);
        let o1: f64 = rng.random();
        let o2: f64 = rng.random();
        let x1 = -std::f64::consts::PI + (i1 as f64 + o1 - 0.5) * h;
        let x2 = -std::f64::consts::PI + (i2 as f64 + o2 - 0.5) * h;
        out.push(TorusPoint::new(x1, x2));
    }
    Ok(out)
}

/// Law of the vortex intensities. Both variants have compact support.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "snake_case", deny_unknown_fields)]
pub enum IntensityLaw {
    Uniform { low: f64, high: f64 },
    Atoms { values: Vec<f64>, weights: Vec<f64> },
}

impl Default for IntensityLaw {
    fn default() -> Self {
        IntensityLaw::Uniform { low: 0.5, high: 1.5 }
    }
}

impl IntensityLaw {
    pub fn atom(value: f64) -> Self {
        IntensityLaw::Atoms {
            values: vec![value],
            weights: vec![1.0],
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            IntensityLaw::Uniform { low, high } => {
                if !(low.is_finite() && high.is_finite() && low < high) {
                    return Err(Error::Config(format!(
                        "uniform law needs low < high, got [{low}, {high}]"
                    )));
                }
            }
            IntensityLaw::Atoms { values, weights } => {
                if values.is_empty() || values.len() != weights.len() {
                    return Err(Error::Config("atoms need matching non-empty values and weights".into()));
                }
                if values.iter().any(|v| !v.is_finite()) || weights.iter().any(|w| !(*w > 0.0) || !w.is_finite()) {
                    return Err(Error::Config("atom values must be finite and weights positive".into()));
                }
            }
        }
        let mean = self.mean();
        if !(mean > 0.0) {
            return Err(Error::Config(format!("intensity law has non-positive mean {mean}")));
        }
        Ok(())
    }

    pub fn mean(&self) -> f64 {
        match self {
            IntensityLaw::Uniform { low, high } => 0.5 * (low + high),
            IntensityLaw::Atoms { values, weights } => {
                let w: f64 = weights.iter().sum();
                values.iter().zip(weights).map(|(v, p)| v * p).sum::<f64>() / w
            }
        }
    }

    pub fn variance(&self) -> f64 {
        match self {
            IntensityLaw::Uniform { low, high } => (high - low).powi(2) / 12.0,
            IntensityLaw::Atoms { values, weights } => {
                let w: f64 = weights.iter().sum();
                let m = self.mean();
                values
                    .iter()
                    .zip(weights)
                    .map(|(v, p)| p * (v - m).powi(2))
                    .sum::<f64>()
                    / w
            }
        }
    }

    pub fn support(&self) -> (f64, f64) {
        match self {
            IntensityLaw::Uniform { low, high } => (*low, *high),
            IntensityLaw::Atoms { values, .. } => values
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(*v), b.max(*v))),
        }
    }
}

/// Intensities `ξ_1..ξ_N`, frozen for the lifetime of an ensemble.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntensitySample {
    pub values: Vec<f64>,
}

impl IntensitySample {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

pub fn sample_intensities(seed: &SeedTree, replica: u64, law: &IntensityLaw, n: usize) -> Result<IntensitySample> {
    law.validate()?;
    let mut rng = seed.stream(StreamTag::Intensities, replica, 0);
    let values = match law {
        IntensityLaw::Uniform { low, high } => (0..n).map(|_| low + (high - low) * rng.random::<f64>()).collect(),
        IntensityLaw::Atoms { values, weights } => {
            let total: f64 = weights.iter().sum();
            let mut cdf = Vec::with_capacity(weights.len());
            let mut acc = 0.0;
            for w in weights {
                acc += w / total;
                cdf.push(acc);
            }
            (0..n)
                .map(|_| {
                    let u: f64 = rng.random();
                    let k = cdf.partition_point(|c| *c <= u).min(values.len() - 1);
                    values[k]
                })
                .collect()
        }
    };
    Ok(IntensitySample { values })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use statrs::distribution::{ContinuousCDF, Normal};

    fn grid(dt: f64, steps: usize) -> TimeGrid {
        TimeGrid::uniform(dt, steps).unwrap()
    }

    #[test]
    fn same_seed_same_bytes() {
        let s = SeedTree::new(7);
        let g = grid(0.01, 50);
        let a = make_paths(&s, &g, 3, 5);
        let b = make_paths(&s, &g, 3, 5);
        assert_eq!(a, b);
        let c = make_paths(&SeedTree::new(8), &g, 3, 5);
        assert_ne!(a.common_increments(), c.common_increments());
    }

    #[test]
    fn non_monotone_grid_rejected() {
        assert!(matches!(TimeGrid::new(vec![0.0, 0.2, 0.1]), Err(Error::Config(_))));
        assert!(TimeGrid::new(vec![0.0, 0.1, 0.1]).is_err());
    }

    #[test]
    fn zero_common_paths_leave_individual_alone() {
        let s = SeedTree::new(3);
        let g = grid(0.1, 20);
        let with = make_paths(&s, &g, 2, 4);
        let without = make_paths(&s, &g, 0, 4);
        assert!(without.common_increments().is_empty());
        assert_eq!(with.individual_increments(), without.individual_increments());
    }

    #[test]
    fn coarse_is_exact_sum_of_fine() {
        let s = SeedTree::new(11);
        let fine = make_paths(&s, &grid(1e-3, 100), 2, 3);
        let coarse = fine.derive_coarse(10).unwrap();
        assert_eq!(coarse.intervals(), 10);
        for jc in 0..10 {
            for k in 0..2 {
                let mut acc = 0.0;
                for sub in 0..10 {
                    acc += fine.common_step(jc * 10 + sub)[k];
                }
                assert_eq!(acc.to_bits(), coarse.common_step(jc)[k].to_bits());
            }
        }
        assert_eq!(coarse.grid().times()[3].to_bits(), fine.grid().times()[30].to_bits());
        assert!(fine.derive_coarse(7).is_err());
    }

    #[test]
    fn increments_pass_ks_against_standard_normal() {
        let s = SeedTree::new(2024);
        let g = TimeGrid::new(
            (0..=100_000)
                .map(|j| j as f64 * 1e-3 + (j as f64).sqrt() * 1e-5)
                .collect(),
        )
        .unwrap();
        let p = make_paths(&s, &g, 1, 0);
        let mut z: Vec<f64> = (0..p.intervals())
            .map(|j| p.common_step(j)[0] / g.dt(j).sqrt())
            .collect();
        z.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let nrm = Normal::new(0.0, 1.0).unwrap();
        let n = z.len() as f64;
        let ks = z
            .iter()
            .enumerate()
            .map(|(i, x)| {
                let f = nrm.cdf(*x);
                (f - i as f64 / n).abs().max((i as f64 + 1.0) / n - f)
            })
            .fold(0.0, f64::max);
        // asymptotic 1% critical value
        assert!(ks < 1.628 / n.sqrt(), "KS statistic {ks}");
    }

    #[test]
    fn replica_streams_are_uncorrelated() {
        let s = SeedTree::new(5);
        let g = grid(1.0, 100_000);
        let a = NoisePaths::generate(&s, &g, 0, 1, StreamIds { common: 0, replica: 0 });
        let b = NoisePaths::generate(&s, &g, 0, 1, StreamIds { common: 0, replica: 1 });
        let xa = a.individual_increments();
        let xb = b.individual_increments();
        let n = xa.len() as f64;
        let (ma, mb) = (xa.iter().sum::<f64>() / n, xb.iter().sum::<f64>() / n);
        let cov: f64 = xa.iter().zip(xb).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>() / n;
        let va: f64 = xa.iter().map(|x| (x - ma).powi(2)).sum::<f64>() / n;
        let vb: f64 = xb.iter().map(|x| (x - mb).powi(2)).sum::<f64>() / n;
        assert!((cov / (va * vb).sqrt()).abs() < 0.02);
    }

    #[test]
    fn binary_round_trip_is_bit_exact() {
        let p = make_paths(&SeedTree::new(99), &grid(0.05, 17), 2, 3);
        let mut buf = Vec::new();
        p.write_to(&mut buf).unwrap();
        assert_eq!(buf.len(), 8 * (4 + 18 + 17 * 2 + 17 * 3 * 2));
        let q = NoisePaths::read_from(&mut buf.as_slice()).unwrap();
        assert_eq!(p, q);
        let mut buf2 = Vec::new();
        q.write_to(&mut buf2).unwrap();
        assert_eq!(buf, buf2);
        buf.push(0);
        assert!(NoisePaths::read_from(&mut buf.as_slice()).is_err());
    }

    #[test]
    fn uniform_density_cell_counts_within_four_sigma() {
        let g = 8;
        let dens = GriddedDensity::uniform(g);
        let n = 100_000;
        let pts = sample_initial(&SeedTree::new(1), 0, &dens, n).unwrap();
        let h = TWO_PI / g as f64;
        let mut counts = vec![0usize; g * g];
        for p in &pts {
            // cell centred at node j spans [x_j - h/2, x_j + h/2)
            let i1 = ((p.x1 + std::f64::consts::PI) / h + 0.5).floor() as usize % g;
            let i2 = ((p.x2 + std::f64::consts::PI) / h + 0.5).floor() as usize % g;
            counts[i1 * g + i2] += 1;
        }
        let prob = 1.0 / (g * g) as f64;
        let mean = n as f64 * prob;
        let sd = (n as f64 * prob * (1.0 - prob)).sqrt();
        for c in counts {
            assert!((c as f64 - mean).abs() < 4.0 * sd, "count {c} vs {mean}");
        }
    }

    #[test]
    fn concentrated_density_stays_in_its_cell() {
        let g = 4;
        let h = TWO_PI / g as f64;
        let mut values = vec![0.0; g * g];
        values[2 * g + 1] = 1.0 / (h * h);
        let dens = GriddedDensity::new(g, values).unwrap();
        let pts = sample_initial(&SeedTree::new(4), 0, &dens, 1000).unwrap();
        let c1 = -std::f64::consts::PI + 2.0 * h;
        let c2 = -std::f64::consts::PI + h;
        for p in pts {
            assert!((p.x1 - c1).abs() <= 0.5 * h + 1e-12);
            assert!((p.x2 - c2).abs() <= 0.5 * h + 1e-12);
        }
        assert!(sample_initial(&SeedTree::new(4), 0, &dens, 0).unwrap().is_empty());
    }

    #[test]
    fn negative_density_rejected() {
        let g = 2;
        let area = (TWO_PI / 2.0).powi(2);
        let v = vec![2.0 / area, -1.0 / area, 0.0, 0.0];
        let dens = GriddedDensity::new_unchecked(g, v);
        assert!(matches!(
            sample_initial(&SeedTree::new(0), 0, &dens, 3),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn uniform_intensity_mean_within_clt_bound() {
        let law = IntensityLaw::default();
        let n = 1_000_000;
        let s = sample_intensities(&SeedTree::new(12), 0, &law, n).unwrap();
        assert!(s.values.iter().all(|v| (0.5..=1.5).contains(v)));
        let mean = s.values.iter().sum::<f64>() / n as f64;
        let bound = 4.0 * (1.0f64 / 12.0).sqrt() / (n as f64).sqrt();
        assert!((mean - 1.0).abs() < bound, "mean {mean}");
        assert!(bound <= 0.004);
    }

    #[test]
    fn single_atom_and_bad_mean() {
        let s = sample_intensities(&SeedTree::new(1), 0, &IntensityLaw::atom(1.0), 100).unwrap();
        assert!(s.values.iter().all(|v| *v == 1.0));
        let bad = IntensityLaw::Uniform { low: -1.0, high: 0.5 };
        assert_eq!(bad.mean(), -0.25);
        assert!(matches!(
            sample_intensities(&SeedTree::new(1), 0, &bad, 10),
            Err(Error::Config(_))
        ));
    }

    proptest! {
        #[test]
        fn increment_variance_tracks_interval(seed in any::<u64>(), dt in 1e-4..1.0f64) {
            // mean of squared normalised increments is 1 to within sampling error
            let g = TimeGrid::uniform(dt, 4000).unwrap();
            let p = make_paths(&SeedTree::new(seed), &g, 1, 0);
            let m2 = p.common_increments().iter().map(|w| w * w / dt).sum::<f64>() / 4000.0;
            prop_assert!((m2 - 1.0).abs() < 6.0 * (2.0f64 / 4000.0).sqrt());
        }
    }
}
