use std::path::Path;
use std::time::Instant;

use serde::Serialize;

use super::{OutputDir, RunConfig, RunManifest};
use crate::error::{Error, Result};
use crate::kernels::TorusKernel;
use crate::mckean_vlasov::{run_copies, FieldTrajectory};
use crate::metrics::{
    conditional_average, empirical_fourier, fisher_information, h_minus_s_distance, kde_density, rate_fit,
    relative_entropy, singular_envelope, tv_distance, GriddedDensity, MetricReport, RateFit, ReplicaReport,
    SingularMomentSample, WeightedEmpirical,
};
use crate::noise::{sample_initial, sample_intensities, NoisePaths, SeedTree, StreamIds, TimeGrid};
use crate::particles::{self, ParticleEnsemble, ParticleSystem};
use crate::spde::{self, SpdeRun};
use crate::spectral::grid_nodes;

/// Grid of the piecewise-constant density the initial positions are drawn from.
pub const INITIAL_SAMPLING_GRID: usize = 256;

/// Replica identifiers of the copy sets in `mv-check`.
const MV_REPLICA_BASE: u64 = 1 << 62;

fn elapsed(t0: Instant) -> f64 {
    t0.elapsed().as_secs_f64()
}

fn common_paths(cfg: &RunConfig, seed: &SeedTree, t_final: f64) -> Result<NoisePaths> {
    let steps = (t_final / cfg.spde.dt).round() as usize;
    let grid = TimeGrid::uniform(cfg.spde.dt, steps)?;
    Ok(NoisePaths::generate(
        seed,
        &grid,
        cfg.sigma().d(),
        0,
        StreamIds::default(),
    ))
}

fn write_fields(out: &mut OutputDir, run: &SpdeRun) -> Result<()> {
    for (k, v) in run.snapshots.iter().enumerate() {
        out.write_with(&format!("fields/snapshot_{k:04}.bin"), |b| v.to_snapshot()?.write_to(b))?;
    }
    out.write_with("fields/diagnostics.csv", |b| run.log.write_csv(b))
}

fn ckp_checked(r: MetricReport) -> Result<MetricReport> {
    if !r.ckp_ok {
        return Err(Error::Numerical {
            t: r.t,
            message: format!("CKP inequality failed: tv {} against entropy {}", r.tv, r.rel_entropy),
        });
    }
    Ok(r)
}

/// Results of the mean-field sweep.
#[derive(Debug, Clone, Serialize)]
pub struct ConvergeSummary {
    pub reports: Vec<MetricReport>,
    /// `(N, sup_t mean h_minus_s²)`.
    pub errors: Vec<(f64, f64)>,
    pub fit: Option<RateFit>,
    pub fingerprint: String,
    pub singular_envelope: f64,
    pub singular_samples: Vec<SingularMomentSample>,
    #[serde(skip)]
    pub manifest: Option<RunManifest>,
}

struct ReplicaOutcome {
    reports: Vec<ReplicaReport>,
    sample: SingularMomentSample,
    last: ParticleEnsemble,
}

fn replica_id(n: usize, r: usize) -> u64 {
    ((n as u64) << 32) | r as u64
}

/// Particle sweep over `particles.n_list` against one shared field run.
pub fn converge(cfg: &RunConfig, out_dir: &Path) -> Result<ConvergeSummary> {
    cfg.validate()?;
    let mut out = OutputDir::create(out_dir, "converge", cfg)?;
    let seed = SeedTree::new(cfg.master_seed);
    let mut n_list = cfg.particles.n_list.clone();
    n_list.sort_unstable();
    n_list.dedup();

    let t0 = Instant::now();
    let fine = common_paths(cfg, &seed, cfg.t_final)?;
    let coarsen = cfg.particles.coarsen;
    let v0 = cfg.initial.field(cfg.spde.n, cfg.intensity.mean())?;
    let reference = spde::run(&v0, &fine, &cfg.spde_config(), cfg.output_every * coarsen)?;
    out.timing("spde", elapsed(t0));
    out.steps("spde", reference.steps as u64);
    out.stream(format!("common:0:{}", fine.d()));
    write_fields(&mut out, &reference)?;

    let coarse = fine.derive_coarse(coarsen)?;
    let fingerprint = coarse.common_fingerprint();
    out.fingerprint("spde", fingerprint.clone());

    let metrics = &cfg.metrics;
    let sampler = cfg.initial.density(INITIAL_SAMPLING_GRID)?;
    let sys = ParticleSystem::new(cfg.particle_config())?;
    let jobs: Vec<(usize, usize)> = n_list
        .iter()
        .flat_map(|&n| (0..cfg.particles.replicas).map(move |r| (n, r)))
        .collect();
    for &n in &n_list {
        out.stream(format!(
            "replicas:{:#x}..{:#x}",
            replica_id(n, 0),
            replica_id(n, cfg.particles.replicas)
        ));
    }
    let targets: Vec<Vec<GriddedDensity>> = n_list
        .iter()
        .map(|&n| {
            let h = metrics.bandwidth_for(n);
            reference
                .snapshots
                .iter()
                .map(|v| GriddedDensity::from_field(v, Some(h), metrics.kde_grid))
                .collect()
        })
        .collect::<Result<_>>()?;

    let t1 = Instant::now();
    let one = |&(n, r): &(usize, usize)| -> Result<ReplicaOutcome> {
        let id = replica_id(n, r);
        let xi = sample_intensities(&seed, id, &cfg.intensity, n)?.values;
        let x0 = sample_initial(&seed, id, &sampler, n)?;
        let paths = coarse.with_individual(&seed, id, n);
        let fp = paths.common_fingerprint();
        let e0 = ParticleEnsemble::new(x0, xi)?;
        let run = particles::run(&e0, &paths, &sys, cfg.output_every, false)?;
        let h = metrics.bandwidth_for(n);
        let k = n_list.iter().position(|&m| m == n).expect("listed");
        let mut reports = Vec::with_capacity(run.snapshots.len());
        let mut sample = None;
        for (snap, (v, target)) in run.snapshots.iter().zip(reference.snapshots.iter().zip(&targets[k])) {
            let emp = snap.empirical();
            let mu = empirical_fourier(&emp, metrics.cutoff);
            let dist = h_minus_s_distance(&mu, v, metrics.s, metrics.cutoff)?;
            let kde = kde_density(&emp, h, metrics.kde_grid)?;
            let tv = tv_distance(&kde, target)?;
            let re = relative_entropy(&kde, target)?;
            let fisher = fisher_information(&kde);
            let report = ckp_checked(MetricReport::single(snap.time(), n, dist, tv, re, fisher))?;
            reports.push(ReplicaReport {
                fingerprint: fp.clone(),
                report,
            });
            sample = Some(SingularMomentSample::from_ensemble(&emp, &kde, 1.0));
        }
        Ok(ReplicaOutcome {
            reports,
            sample: sample.expect("at least one snapshot"),
            last: run.snapshots.last().expect("non-empty").clone(),
        })
    };
    #[cfg(feature = "parallel")]
    let outcomes: Vec<ReplicaOutcome> = {
        use rayon::prelude::*;
        jobs.par_iter().map(one).collect::<Result<_>>()?
    };
    #[cfg(not(feature = "parallel"))]
    let outcomes: Vec<ReplicaOutcome> = jobs.iter().map(one).collect::<Result<_>>()?;
    out.timing("particles", elapsed(t1));
    out.steps("particles", (coarse.intervals() * jobs.len()) as u64);

    if let Some(o) = outcomes.iter().find(|o| o.reports[0].fingerprint != fingerprint) {
        return Err(Error::Numerical {
            t: 0.0,
            message: format!(
                "particle common path {} differs from the field's {fingerprint}",
                o.reports[0].fingerprint
            ),
        });
    }
    out.fingerprint("particles", fingerprint.clone());

    let times = reference.snapshots.len();
    let mut reports = Vec::new();
    let mut errors = Vec::new();
    for (k, &n) in n_list.iter().enumerate() {
        let block = &outcomes[k * cfg.particles.replicas..(k + 1) * cfg.particles.replicas];
        let mut sup: f64 = 0.0;
        for ti in 0..times {
            let at: Vec<ReplicaReport> = block.iter().map(|o| o.reports[ti].clone()).collect();
            let avg = ckp_checked(conditional_average(&at)?)?;
            sup = sup.max(avg.h_minus_s_sq);
            reports.push(avg);
        }
        errors.push((n as f64, sup));
        out.write_with(&format!("particles/N{n}_r0_final.bin"), |b| block[0].last.write_to(b))?;
    }
    let fit = if errors.len() >= 3 {
        Some(rate_fit(&errors)?)
    } else {
        log::warn!("{} particle counts, need at least 3 for a rate fit", errors.len());
        None
    };
    let samples: Vec<SingularMomentSample> = outcomes.iter().map(|o| o.sample).collect();
    let envelope = singular_envelope(&samples, 7.0 / 8.0);

    out.write_with("metrics.csv", |b| {
        use std::io::Write;
        writeln!(b, "{}", MetricReport::CSV_HEADER)?;
        for r in &reports {
            writeln!(b, "{}", r.csv_row())?;
        }
        Ok(())
    })?;
    let mut summary = ConvergeSummary {
        reports,
        errors,
        fit,
        fingerprint,
        singular_envelope: envelope,
        singular_samples: samples,
        manifest: None,
    };
    out.write_json(
        "rates.json",
        &serde_json::json!({
            "metric": "sup over output times of the replica mean squared negative Sobolev distance",
            "s": metrics.s,
            "cutoff": metrics.cutoff,
            "points": summary.errors,
            "fit": summary.fit,
            "common_path_fingerprint": summary.fingerprint,
            "singular_moment": {
                "exponent": 1.0,
                "beta": 0.875,
                "envelope": summary.singular_envelope,
            },
        }),
    )?;
    summary.manifest = Some(out.finish()?);
    Ok(summary)
}

/// One row of the copy-count table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MvRow {
    pub copies: usize,
    pub tv: f64,
    pub rel_entropy: f64,
    pub h_minus_s: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct MvSummary {
    pub rows: Vec<MvRow>,
    /// `tv` ratio between consecutive rows.
    pub ratios: Vec<f64>,
    pub fingerprint: String,
    #[serde(skip)]
    pub manifest: Option<RunManifest>,
}

/// Copies driven by the field against the field itself at `mv.t_check`.
pub fn mv_check(cfg: &RunConfig, out_dir: &Path) -> Result<MvSummary> {
    cfg.validate()?;
    let mv = &cfg.mv;
    let mut out = OutputDir::create(out_dir, "mv-check", cfg)?;
    let seed = SeedTree::new(cfg.master_seed);
    let coarsen = cfg.particles.coarsen;
    let fine_steps = (mv.t_check / cfg.spde.dt).round() as usize;
    if fine_steps == 0 || !fine_steps.is_multiple_of(coarsen) || !fine_steps.is_multiple_of(mv.snapshot_every) {
        return Err(Error::Config(format!(
            "mv.t_check = {} must be a multiple of the particle step and the snapshot spacing",
            mv.t_check
        )));
    }

    let t0 = Instant::now();
    let fine = common_paths(cfg, &seed, mv.t_check)?;
    let v0 = cfg.initial.field(cfg.spde.n, cfg.intensity.mean())?;
    let field = spde::run(&v0, &fine, &cfg.spde_config(), mv.snapshot_every)?;
    out.timing("spde", elapsed(t0));
    out.steps("spde", field.steps as u64);
    out.stream(format!("common:0:{}", fine.d()));
    let traj = FieldTrajectory::new(&field.snapshots)?;
    let v_end = field.snapshots.last().expect("non-empty");
    out.write_with("fields/final.bin", |b| v_end.to_snapshot()?.write_to(b))?;

    let coarse = fine.derive_coarse(coarsen)?;
    let fingerprint = coarse.common_fingerprint();
    out.fingerprint("spde", fingerprint.clone());
    let target = GriddedDensity::from_field(v_end, Some(mv.bandwidth), mv.grid)?;
    let sampler = cfg.initial.density(INITIAL_SAMPLING_GRID)?;
    let copy_cfg = cfg.copy_config();

    let t1 = Instant::now();
    let mut rows = Vec::new();
    for &c in &mv.copies {
        let id = MV_REPLICA_BASE | c as u64;
        out.stream(format!("copies:{id:#x}:{c}"));
        let y0 = sample_initial(&seed, id, &sampler, c)?;
        let paths = coarse.with_individual(&seed, id, c);
        if paths.common_fingerprint() != fingerprint {
            return Err(Error::Numerical {
                t: 0.0,
                message: "copies see a different common path".into(),
            });
        }
        let run = run_copies(&traj, &paths, &y0, &copy_cfg, paths.intervals())?;
        let last = run.positions.last().expect("non-empty");
        let ones = vec![1.0; c];
        let emp = WeightedEmpirical::new(last, &ones)?;
        let kde = kde_density(&emp, mv.bandwidth, mv.grid)?;
        let tv = tv_distance(&kde, &target)?;
        let re = relative_entropy(&kde, &target)?;
        ckp_checked(MetricReport::single(mv.t_check, c, 0.0, tv, re, 0.0))?;
        let mu = empirical_fourier(&emp, cfg.metrics.cutoff);
        let scaled = v_end.scaled(1.0 / v_end.mean().re);
        let hs = h_minus_s_distance(&mu, &scaled, cfg.metrics.s, cfg.metrics.cutoff)?;
        rows.push(MvRow {
            copies: c,
            tv,
            rel_entropy: re,
            h_minus_s: hs,
        });
        out.steps(&format!("copies_{c}"), (c * paths.intervals()) as u64);
    }
    out.timing("copies", elapsed(t1));
    out.fingerprint("copies", fingerprint.clone());
    let ratios: Vec<f64> = rows.windows(2).map(|w| w[1].tv / w[0].tv).collect();

    out.write_with("metrics.csv", |b| {
        use std::io::Write;
        writeln!(b, "copies,tv,rel_entropy,h_minus_s")?;
        for r in &rows {
            writeln!(b, "{},{:e},{:e},{:e}", r.copies, r.tv, r.rel_entropy, r.h_minus_s)?;
        }
        Ok(())
    })?;
    out.write_json(
        "rates.json",
        &serde_json::json!({ "t": mv.t_check, "bandwidth": mv.bandwidth, "tv_ratios": ratios, "rows": rows }),
    )?;
    let mut summary = MvSummary {
        rows,
        ratios,
        fingerprint,
        manifest: None,
    };
    summary.manifest = Some(out.finish()?);
    Ok(summary)
}

/// Field run alone, snapshots every `output_every · particles.coarsen` steps.
pub fn solve_spde(cfg: &RunConfig, out_dir: &Path) -> Result<RunManifest> {
    cfg.validate()?;
    let mut out = OutputDir::create(out_dir, "solve-spde", cfg)?;
    let seed = SeedTree::new(cfg.master_seed);
    let t0 = Instant::now();
    let fine = common_paths(cfg, &seed, cfg.t_final)?;
    let v0 = cfg.initial.field(cfg.spde.n, cfg.intensity.mean())?;
    let run = spde::run(&v0, &fine, &cfg.spde_config(), cfg.output_every * cfg.particles.coarsen)?;
    out.timing("spde", elapsed(t0));
    out.steps("spde", run.steps as u64);
    out.stream(format!("common:0:{}", fine.d()));
    out.fingerprint("spde", fine.derive_coarse(cfg.particles.coarsen)?.common_fingerprint());
    write_fields(&mut out, &run)?;
    out.finish()
}

/// One particle run of `particles.n` vortices, replica 0.
pub fn simulate_particles(cfg: &RunConfig, out_dir: &Path) -> Result<RunManifest> {
    cfg.validate()?;
    let mut out = OutputDir::create(out_dir, "simulate-particles", cfg)?;
    let seed = SeedTree::new(cfg.master_seed);
    let n = cfg.particles.n;
    let t0 = Instant::now();
    let coarse = common_paths(cfg, &seed, cfg.t_final)?.derive_coarse(cfg.particles.coarsen)?;
    let id = replica_id(n, 0);
    let xi = sample_intensities(&seed, id, &cfg.intensity, n)?.values;
    let x0 = sample_initial(&seed, id, &cfg.initial.density(INITIAL_SAMPLING_GRID)?, n)?;
    let paths = coarse.with_individual(&seed, id, n);
    out.stream(format!("common:0:{}", paths.d()));
    out.stream(format!("replica:{id:#x}:{n}"));
    out.fingerprint("particles", paths.common_fingerprint());
    let sys = ParticleSystem::new(cfg.particle_config())?;
    let run = particles::run(
        &ParticleEnsemble::new(x0, xi)?,
        &paths,
        &sys,
        cfg.output_every,
        cfg.particles.diagnostics,
    )?;
    out.timing("particles", elapsed(t0));
    out.steps("particles", run.steps as u64);
    out.write_with("particles/trajectory.csv", |b| run.write_trajectory_csv(b))?;
    if cfg.particles.diagnostics {
        out.write_with("particles/diagnostics.csv", |b| run.write_diagnostics_csv(b))?;
        let below = run.diagnostics.iter().filter(|d| d.min_dist < cfg.epsilon()).count();
        if below > 0 {
            log::warn!("{below} output times with a pair closer than ε = {}", cfg.epsilon());
        }
    }
    for (k, s) in run.snapshots.iter().enumerate() {
        out.write_with(&format!("particles/snapshot_{k:04}.bin"), |b| s.write_to(b))?;
    }
    out.finish()
}

/// `G` and `K` at the nodes of a `kernel_table.points` grid, as CSV.
pub fn kernel_table(cfg: &RunConfig, out_dir: &Path) -> Result<RunManifest> {
    cfg.validate()?;
    let mut out = OutputDir::create(out_dir, "kernel-table", cfg)?;
    let kernel = TorusKernel::new(cfg.kernel_spec())?;
    let regular = cfg.kernel_table.regularized;
    let nodes = grid_nodes(cfg.kernel_table.points);
    out.write_with("kernel_table.csv", |b| {
        use std::io::Write;
        writeln!(b, "x1,x2,g,k1,k2")?;
        for &a in &nodes {
            for &c in &nodes {
                let x = crate::TorusPoint::new(a, c);
                let (g, k) = if regular {
                    (kernel.green_regularized(x)?, kernel.biot_savart_regularized(x)?)
                } else {
                    (kernel.green_series(x), kernel.biot_savart_series(x))
                };
                writeln!(b, "{a:e},{c:e},{g:e},{:e},{:e}", k[0], k[1])?;
            }
        }
        Ok(())
    })?;
    out.finish()
}
