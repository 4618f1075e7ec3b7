//! Executes a [`RunConfig`] and writes its CSV outputs and metadata sidecar.
//!
//! Numbers are written in the shortest form that parses back to the same
//! `f64`. All results are computed before the first file is created, and
//! anything already written is removed if a later write fails.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::config::{Experiment, RunConfig};
use crate::error::Result;
use crate::experiments::{
    disorder_average, mask_string, missing_spin_average, run as run_one, sweep_length,
    DisorderEnsemble, MissingSpinEnsemble, SweepPoint,
};
use crate::model::khz_to_rate;
use crate::observables::Trajectory;
use crate::tebd::ConvergenceReport;

pub const TRAJECTORY_HEADER: &str = "time_us,E,trace,purity_or_discarded_weight";
pub const SWEEP_HEADER: &str = "geometry,n,gamma_c_khz,e_max,t_at_max_us";
pub const MISSING_HEADER: &str = "mask,m_c,e_max";
pub const MISSING_AVERAGE_HEADER: &str = "p,avg_e_max";
pub const DISORDER_HEADER: &str = "sigma_mhz,k,mean_e_max,std_err";

fn num(x: f64) -> String {
    format!("{x:?}")
}

pub fn trajectory_csv(t: &Trajectory) -> String {
    let mut s = String::from(TRAJECTORY_HEADER);
    s.push('\n');
    for i in 0..t.len() {
        let _ = writeln!(
            s,
            "{},{},{},{}",
            num(t.times[i]),
            num(t.e[i]),
            num(t.trace[i]),
            num(t.aux[i])
        );
    }
    s
}

/// Points ordered by N, then by rate; `gamma_c_khz` is the configured rate
/// list, echoed verbatim.
pub fn sweep_csv(points: &[SweepPoint], gamma_c_khz: &[f64]) -> String {
    let mut s = String::from(SWEEP_HEADER);
    s.push('\n');
    for (i, p) in points.iter().enumerate() {
        let _ = writeln!(
            s,
            "{},{},{},{},{}",
            p.kind.name(),
            p.n,
            num(gamma_c_khz[i % gamma_c_khz.len()]),
            num(p.outcome.e_max),
            num(p.outcome.t_at_max)
        );
    }
    s
}

pub fn missing_csv(ens: &MissingSpinEnsemble) -> String {
    let mut s = String::from(MISSING_HEADER);
    s.push('\n');
    for c in &ens.configs {
        let _ = writeln!(s, "{},{},{}", mask_string(&c.mask), c.m_c, num(c.e_max));
    }
    s.push_str(MISSING_AVERAGE_HEADER);
    s.push('\n');
    for (&p, &a) in ens.p_grid.iter().zip(&ens.averages) {
        let _ = writeln!(s, "{},{}", num(p), num(a));
    }
    s
}

/// One row per ensemble; `sigma_mhz` echoes the configured values.
pub fn disorder_csv(sigma_mhz: &[f64], ensembles: &[DisorderEnsemble]) -> String {
    let mut s = String::from(DISORDER_HEADER);
    s.push('\n');
    for (&sig, e) in sigma_mhz.iter().zip(ensembles) {
        let _ = writeln!(s, "{},{},{},{}", num(sig), e.k, num(e.mean), num(e.std_err));
    }
    s
}

/// Sidecar path: the output path with its extension replaced by `meta`.
pub fn meta_path(output: &Path) -> PathBuf {
    output.with_extension("meta")
}

fn report_lines(s: &mut String, label: &str, r: &ConvergenceReport) {
    let _ = writeln!(
        s,
        "convergence {label}: chis = {:?}, deviations = {:?}, converged_chi = {}",
        r.chis, r.deviations, r.converged_chi
    );
}

/// Files produced by [`execute`] with their contents.
#[derive(Clone, Debug, PartialEq)]
pub struct Artifacts {
    pub files: Vec<(PathBuf, String)>,
}

/// Runs the configured experiment and returns the files to write.
pub fn compute(cfg: &RunConfig) -> Result<Artifacts> {
    cfg.validate()?;
    let solver = cfg.solver_config();
    let mut files = Vec::new();
    let mut meta = String::new();
    let _ = writeln!(meta, "# spinchannel {}", env!("CARGO_PKG_VERSION"));
    meta.push_str(&cfg.emit());
    let _ = writeln!(meta, "\n[run]");
    let _ = writeln!(meta, "seed = {}", cfg.seed);
    match cfg.experiment {
        Experiment::Dynamics => {
            let spec = cfg.channel_spec()?;
            let grid = solver.time_grid(&spec)?;
            let out = run_one(&spec, &solver)?;
            let _ = writeln!(meta, "backend = {}", out.trajectory.meta.solver.name());
            let _ = writeln!(meta, "dt_us = {}", num(grid.dt));
            let _ = writeln!(meta, "t_max_us = {}", num(grid.t_max));
            let _ = writeln!(meta, "e_max = {}", num(out.e_max));
            let _ = writeln!(meta, "t_at_max_us = {}", num(out.t_at_max));
            if let Some(r) = &out.convergence {
                report_lines(&mut meta, "run", r);
            }
            files.push((cfg.output.clone(), trajectory_csv(&out.trajectory)));
        }
        Experiment::LengthSweep => {
            let rates: Vec<f64> = cfg.gamma_c_list_khz.iter().map(|&g| khz_to_rate(g)).collect();
            let base = cfg.channel_spec_for(cfg.n_list[0], cfg.gamma_c_list_khz[0])?;
            let points = if cfg.spacing_nm.is_some() {
                let mut pts = Vec::new();
                for &n in &cfg.n_list {
                    for (&g, &r) in cfg.gamma_c_list_khz.iter().zip(&rates) {
                        let spec = cfg.channel_spec_for(n, g)?;
                        let outcome = run_one(&spec, &solver)?;
                        pts.push(SweepPoint {
                            kind: cfg.geometry,
                            n,
                            gamma_c: r,
                            outcome,
                        });
                    }
                }
                pts
            } else {
                sweep_length(
                    cfg.geometry,
                    &cfg.n_list,
                    cfg.separation_nm,
                    base.gamma_nv,
                    &rates,
                    &solver,
                )?
            };
            let stem = cfg.output.with_extension("");
            for (i, p) in points.iter().enumerate() {
                let name = format!("{}_n{}_g{i}.csv", stem.display(), p.n);
                let _ = writeln!(
                    meta,
                    "point {i}: n = {}, gamma_c_khz = {}, backend = {}, trajectory = {name}",
                    p.n,
                    num(cfg.gamma_c_list_khz[i % cfg.gamma_c_list_khz.len()]),
                    p.outcome.trajectory.meta.solver.name()
                );
                if let Some(r) = &p.outcome.convergence {
                    report_lines(&mut meta, &format!("point {i}"), r);
                }
                files.push((PathBuf::from(name), trajectory_csv(&p.outcome.trajectory)));
            }
            files.insert(0, (cfg.output.clone(), sweep_csv(&points, &cfg.gamma_c_list_khz)));
        }
        Experiment::Missing => {
            let base = cfg.channel_spec_for(cfg.n, cfg.gamma_c_khz)?;
            let ens = missing_spin_average(&base, &cfg.p_grid, &solver)?;
            let _ = writeln!(meta, "dt_us = {}", num(ens.grid.dt));
            let _ = writeln!(meta, "t_max_us = {}", num(ens.grid.t_max));
            let simulated = ens.configs.iter().filter(|c| c.simulated).count();
            let _ = writeln!(meta, "configurations = {}", ens.configs.len());
            let _ = writeln!(meta, "simulated = {simulated}");
            files.push((cfg.output.clone(), missing_csv(&ens)));
        }
        Experiment::Disorder => {
            let mut base = cfg.channel_spec_for(cfg.n, cfg.gamma_c_khz)?;
            if let Some(m) = &cfg.missing_mask {
                base = base.with_missing(m.clone())?;
            }
            let mut ensembles = Vec::new();
            for sigma in cfg.sigmas(&base) {
                ensembles.push(disorder_average(
                    &base,
                    sigma,
                    cfg.realizations,
                    cfg.seed,
                    cfg.randomize_g,
                    &solver,
                )?);
            }
            if let Some(e) = ensembles.first() {
                let _ = writeln!(meta, "dt_us = {}", num(e.grid.dt));
                let _ = writeln!(meta, "t_max_us = {}", num(e.grid.t_max));
            }
            let _ = writeln!(meta, "rng = ChaCha8, key from seed, stream = realization index");
            files.push((cfg.output.clone(), disorder_csv(&cfg.sigma_mhz, &ensembles)));
        }
    }
    files.push((meta_path(&cfg.output), meta));
    Ok(Artifacts { files })
}

/// Writes all artifacts, removing those already written if one fails.
pub fn write_artifacts(art: &Artifacts) -> Result<()> {
    let mut written: Vec<&Path> = Vec::new();
    for (path, content) in &art.files {
        if let Err(e) = fs::write(path, content) {
            for p in written {
                let _ = fs::remove_file(p);
            }
            let _ = fs::remove_file(path);
            return Err(e.into());
        }
        written.push(path);
    }
    Ok(())
}

/// Runs `cfg` and writes its outputs. Returns the written paths.
pub fn execute(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let art = compute(cfg)?;
    write_artifacts(&art)?;
    Ok(art.files.into_iter().map(|(p, _)| p).collect())
}
