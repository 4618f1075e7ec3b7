//! The three design-space studies: channel-length sweeps, averaging over
//! missing-spin configurations, and averaging over log-normal coupling
//! disorder.
//!
//! Every study resolves one time step and one time window from its base spec
//! and reuses them for all derived runs, so configurations and realizations
//! are directly comparable. Work items run on the rayon pool; results are
//! collected in item order, which keeps the aggregates independent of the
//! number of workers.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal};
use rayon::prelude::*;

use crate::dense::{active_spins, evolve_dense, DenseConfig, DEFAULT_MAX_DENSE_SPINS};
use crate::error::{Error, Result};
use crate::model::{
    build_hamiltonian, flip_mask, nv_connected, uniform_spec, ChannelSpec, GeometryKind,
};
use crate::mpo::DEFAULT_CUTOFF;
use crate::observables::{max_e, Trajectory};
use crate::tebd::{
    converge_chi, evolve_tebd, ConvergenceReport, TebdConfig, DEFAULT_ABORT_WEIGHT,
    DEFAULT_CONVERGENCE_TOL,
};

/// Largest channel that [`missing_spin_average`] will enumerate.
pub const MAX_ENUMERATED_SPINS: usize = 14;

/// Default time step in units of 1/κ_max.
pub const DEFAULT_DT_FACTOR: f64 = 0.01;

/// Default window length in units of (N+2)/κ_max. The first transfer peak
/// sits near 0.6 (N+2)/κ_max for chains and earlier for ladders.
pub const DEFAULT_WINDOW_FACTOR: f64 = 1.5;

/// Ratios are only reported where the chain average exceeds this.
const RATIO_FLOOR: f64 = 1e-12;

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum SolverChoice {
    Dense,
    Tebd,
    /// Dense up to the dense spin limit, tensor backend beyond it.
    Auto,
}

impl SolverChoice {
    pub fn name(self) -> &'static str {
        match self {
            SolverChoice::Dense => "dense",
            SolverChoice::Tebd => "tebd",
            SolverChoice::Auto => "auto",
        }
    }
}

impl std::str::FromStr for SolverChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dense" => Ok(SolverChoice::Dense),
            "tebd" => Ok(SolverChoice::Tebd),
            "auto" => Ok(SolverChoice::Auto),
            _ => Err(Error::Usage(format!("unknown solver '{s}'"))),
        }
    }
}

/// Solver settings shared by all runs of a study.
#[derive(Clone, Debug, PartialEq)]
pub struct SolverConfig {
    pub choice: SolverChoice,
    /// Fixed time step in µs; `None` uses `dt_factor / κ_max`.
    pub dt: Option<f64>,
    pub dt_factor: f64,
    /// Fixed window in µs; `None` uses `window_factor · (N+2) / κ_max`.
    pub t_max: Option<f64>,
    pub window_factor: f64,
    pub sample_every: usize,
    /// Bond dimensions tried in turn. A single entry runs once without a
    /// convergence check.
    pub chi_schedule: Vec<usize>,
    pub cutoff: f64,
    pub convergence_tol: f64,
    pub trotter_order: u8,
    pub abort_weight: f64,
    pub max_dense_spins: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            choice: SolverChoice::Auto,
            dt: None,
            dt_factor: DEFAULT_DT_FACTOR,
            t_max: None,
            window_factor: DEFAULT_WINDOW_FACTOR,
            sample_every: 1,
            chi_schedule: vec![64, 128],
            cutoff: DEFAULT_CUTOFF,
            convergence_tol: DEFAULT_CONVERGENCE_TOL,
            trotter_order: 2,
            abort_weight: DEFAULT_ABORT_WEIGHT,
            max_dense_spins: DEFAULT_MAX_DENSE_SPINS,
        }
    }
}

/// Time step and window of a run, both in µs.
#[derive(Copy, Clone, Debug, PartialEq)]
pub struct TimeGrid {
    pub dt: f64,
    pub t_max: f64,
}

impl SolverConfig {
    pub fn time_grid(&self, spec: &ChannelSpec) -> Result<TimeGrid> {
        let k = spec.max_coupling();
        let need_k = self.dt.is_none() || self.t_max.is_none();
        if need_k && !(k > 0.0) {
            return Err(Error::Usage(
                "spec has no couplings; give dt and t_max explicitly".into(),
            ));
        }
        let dt = self.dt.unwrap_or(self.dt_factor / k);
        let n = spec.geometry.n_channel as f64;
        let t_max = self.t_max.unwrap_or(self.window_factor * (n + 2.0) / k);
        Ok(TimeGrid { dt, t_max })
    }

    /// Backend used for `spec` after resolving `Auto`.
    pub fn backend(&self, spec: &ChannelSpec) -> SolverChoice {
        match self.choice {
            SolverChoice::Auto if active_spins(spec).len() <= self.max_dense_spins => {
                SolverChoice::Dense
            }
            SolverChoice::Auto => SolverChoice::Tebd,
            c => c,
        }
    }
}

#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub trajectory: Trajectory,
    pub e_max: f64,
    pub t_at_max: f64,
    pub convergence: Option<ConvergenceReport>,
}

/// Runs one evolution of `spec` on the grid `grid`.
pub fn run_on_grid(spec: &ChannelSpec, cfg: &SolverConfig, grid: TimeGrid) -> Result<RunOutcome> {
    let (trajectory, convergence) = match cfg.backend(spec) {
        SolverChoice::Dense => {
            let dcfg = DenseConfig {
                dt: grid.dt,
                t_max: grid.t_max,
                sample_every: cfg.sample_every,
                max_spins: cfg.max_dense_spins,
            };
            (evolve_dense(spec, &dcfg)?, None)
        }
        _ => {
            let first = *cfg
                .chi_schedule
                .first()
                .ok_or_else(|| Error::Usage("chi schedule is empty".into()))?;
            let tcfg = TebdConfig {
                dt: grid.dt,
                t_max: grid.t_max,
                sample_every: cfg.sample_every,
                chi_max: first,
                cutoff: cfg.cutoff,
                order: cfg.trotter_order,
                abort_weight: cfg.abort_weight,
            };
            if cfg.chi_schedule.len() == 1 {
                (evolve_tebd(spec, &tcfg)?, None)
            } else {
                let (t, r) = converge_chi(spec, &tcfg, &cfg.chi_schedule, cfg.convergence_tol)?;
                (t, Some(r))
            }
        }
    };
    let (e_max, t_at_max) = max_e(&trajectory)?;
    Ok(RunOutcome {
        trajectory,
        e_max,
        t_at_max,
        convergence,
    })
}

/// Runs one evolution with the grid resolved from `spec` itself.
pub fn run(spec: &ChannelSpec, cfg: &SolverConfig) -> Result<RunOutcome> {
    run_on_grid(spec, cfg, cfg.time_grid(spec)?)
}

fn annotate(e: Error, context: &str) -> Error {
    match e {
        Error::Convergence { message, history } => Error::Convergence {
            message: format!("{context}: {message}"),
            history,
        },
        Error::Numerical(m) => Error::Numerical(format!("{context}: {m}")),
        Error::IntegrationAccuracy(m) => Error::IntegrationAccuracy(format!("{context}: {m}")),
        Error::Capability(m) => Error::Capability(format!("{context}: {m}")),
        Error::Diagnostics(m) => Error::Diagnostics(format!("{context}: {m}")),
        other => other,
    }
}

#[derive(Clone, Debug)]
pub struct SweepPoint {
    pub kind: GeometryKind,
    pub n: usize,
    /// Channel decay rate in µs⁻¹.
    pub gamma_c: f64,
    pub outcome: RunOutcome,
}

/// E_Max over a grid of channel lengths and channel decay rates at a fixed
/// NV separation. Points are ordered by N, then by γ_C.
pub fn sweep_length(
    kind: GeometryKind,
    ns: &[usize],
    separation_nm: f64,
    gamma_nv: f64,
    gamma_cs: &[f64],
    cfg: &SolverConfig,
) -> Result<Vec<SweepPoint>> {
    let grid: Vec<(usize, f64)> = ns
        .iter()
        .flat_map(|&n| gamma_cs.iter().map(move |&g| (n, g)))
        .collect();
    grid.par_iter()
        .map(|&(n, gamma_c)| {
            let spec = uniform_spec(kind, n, separation_nm, gamma_nv, gamma_c)?;
            let outcome = run(&spec, cfg)
                .map_err(|e| annotate(e, &format!("{} N={n} gamma_c={gamma_c}", kind.name())))?;
            Ok(SweepPoint {
                kind,
                n,
                gamma_c,
                outcome,
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConfigResult {
    /// Missing flags in channel-spin order.
    pub mask: Vec<bool>,
    pub m_c: usize,
    pub e_max: f64,
    /// False when the value was inferred (disconnected channel or mirror
    /// image of a simulated configuration).
    pub simulated: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MissingSpinEnsemble {
    pub base: ChannelSpec,
    pub grid: TimeGrid,
    /// Every configuration, ordered by the mask read as a binary number with
    /// spin 0 as the least significant bit.
    pub configs: Vec<ConfigResult>,
    pub p_grid: Vec<f64>,
    pub averages: Vec<f64>,
}

impl MissingSpinEnsemble {
    /// Channel spin count M.
    pub fn spins(&self) -> usize {
        self.base.geometry.channel_spins()
    }

    /// ⟨E_Max⟩ at an arbitrary probability.
    pub fn average_at(&self, p: f64) -> f64 {
        let m = self.spins();
        self.configs
            .iter()
            .map(|c| binomial_weight(p, c.m_c, m) * c.e_max)
            .sum()
    }

    pub fn e_max_of(&self, mask: &[bool]) -> Option<f64> {
        self.configs.get(mask_index(mask)).map(|c| c.e_max)
    }
}

/// P^m (1−P)^(M−m), the probability of one particular configuration with
/// `m` of `total` spins missing.
pub fn binomial_weight(p: f64, m: usize, total: usize) -> f64 {
    p.powi(m as i32) * (1.0 - p).powi((total - m) as i32)
}

fn mask_from_index(index: usize, len: usize) -> Vec<bool> {
    (0..len).map(|i| index >> i & 1 == 1).collect()
}

fn mask_index(mask: &[bool]) -> usize {
    mask.iter().enumerate().map(|(i, &b)| (b as usize) << i).sum()
}

/// Simulates every missing-spin configuration of `base` once and averages
/// E_Max with binomial weights for each `p` in `p_grid`.
///
/// Configurations in which no bond path joins the two NVs are assigned
/// E_Max = 0 without simulation. For rail-symmetric ladders only one of each
/// B↔T mirror pair is simulated.
pub fn missing_spin_average(
    base: &ChannelSpec,
    p_grid: &[f64],
    cfg: &SolverConfig,
) -> Result<MissingSpinEnsemble> {
    base.validate()?;
    let m = base.geometry.channel_spins();
    if m > MAX_ENUMERATED_SPINS {
        return Err(Error::Capability(format!(
            "{m} channel spins give 2^{m} configurations; at most {MAX_ENUMERATED_SPINS} spins are enumerated"
        )));
    }
    if let Some(&p) = p_grid.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(Error::Domain(format!("probability {p} is outside [0, 1]")));
    }
    let grid = cfg.time_grid(base)?;
    let symmetric = base.is_rail_symmetric();
    let count = 1usize << m;

    // representative index for each configuration
    let rep: Vec<usize> = (0..count)
        .map(|i| {
            if symmetric {
                i.min(mask_index(&flip_mask(&base.geometry, &mask_from_index(i, m))))
            } else {
                i
            }
        })
        .collect();
    let to_run: Vec<usize> = (0..count).filter(|&i| rep[i] == i).collect();
    let values: Vec<(usize, f64, bool)> = to_run
        .par_iter()
        .map(|&i| {
            let mask = mask_from_index(i, m);
            let spec = base.with_missing(mask)?;
            if !nv_connected(&build_hamiltonian(&spec)) {
                return Ok((i, 0.0, false));
            }
            let out = run_on_grid(&spec, cfg, grid)
                .map_err(|e| annotate(e, &format!("configuration {}", mask_string(&spec.missing))))?;
            Ok((i, out.e_max, true))
        })
        .collect::<Result<_>>()?;

    let mut by_index = vec![(0.0, false); count];
    for &(i, e, sim) in &values {
        by_index[i] = (e, sim);
    }
    let configs: Vec<ConfigResult> = (0..count)
        .map(|i| {
            let mask = mask_from_index(i, m);
            let (e_max, sim) = by_index[rep[i]];
            ConfigResult {
                m_c: mask.iter().filter(|&&b| b).count(),
                mask,
                e_max,
                simulated: sim && rep[i] == i,
            }
        })
        .collect();
    let mut ens = MissingSpinEnsemble {
        base: base.clone(),
        grid,
        configs,
        p_grid: p_grid.to_vec(),
        averages: Vec::new(),
    };
    ens.averages = p_grid.iter().map(|&p| ens.average_at(p)).collect();
    Ok(ens)
}

/// Mask as a string of 0/1 in channel-spin order, `1` meaning missing.
pub fn mask_string(mask: &[bool]) -> String {
    mask.iter().map(|&b| if b { '1' } else { '0' }).collect()
}

pub fn parse_mask(s: &str) -> Result<Vec<bool>> {
    s.chars()
        .map(|c| match c {
            '0' => Ok(false),
            '1' => Ok(true),
            _ => Err(Error::Usage(format!("mask '{s}' must contain only 0 and 1"))),
        })
        .collect()
}

/// Ladder:chain ratio of ⟨E_Max⟩ on a shared P grid, omitting points where
/// the chain average vanishes.
pub fn fig3_ratio(
    chain: &MissingSpinEnsemble,
    ladder: &MissingSpinEnsemble,
) -> Result<Vec<(f64, f64)>> {
    if chain.p_grid != ladder.p_grid {
        return Err(Error::Usage("ensembles use different P grids".into()));
    }
    Ok(chain
        .p_grid
        .iter()
        .zip(chain.averages.iter().zip(&ladder.averages))
        .filter(|(_, (&c, _))| c > RATIO_FLOOR)
        .map(|(&p, (&c, &l))| (p, l / c))
        .collect())
}

/// Log-normal law with prescribed mean and standard deviation.
#[derive(Copy, Clone, Debug, PartialEq)]
pub struct CouplingLaw {
    pub mean: f64,
    pub sd: f64,
    /// Location and scale of the underlying normal.
    pub mu: f64,
    pub s: f64,
}

impl CouplingLaw {
    pub fn new(mean: f64, sd: f64) -> Result<Self> {
        if !(mean.is_finite() && mean > 0.0 && sd.is_finite() && sd >= 0.0) {
            return Err(Error::Domain(format!(
                "log-normal needs mean > 0 and sd >= 0, got {mean} and {sd}"
            )));
        }
        let s2 = (sd * sd / (mean * mean)).ln_1p();
        Ok(CouplingLaw {
            mean,
            sd,
            mu: mean.ln() - 0.5 * s2,
            s: s2.sqrt(),
        })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        if self.sd == 0.0 {
            return self.mean;
        }
        LogNormal::new(self.mu, self.s)
            .expect("validated parameters")
            .sample(rng)
    }
}

/// Generator for realization `index`: the root seed selects the key, the
/// index selects the stream, so each realization can be reproduced alone.
pub fn realization_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Draws one disordered copy of `base`. Intra-channel couplings are drawn
/// in order: rail bonds (B then T per bond, T skipped for chains), then
/// rungs, then the NV couplings when `include_g` is set. Each coupling's law
/// is centered on its ideal value.
pub fn disordered_spec<R: Rng + ?Sized>(
    base: &ChannelSpec,
    sigma: f64,
    include_g: bool,
    rng: &mut R,
) -> Result<ChannelSpec> {
    let rails = base.geometry.rails().len();
    let mut spec = base.clone();
    let draw = |v: &mut f64, rng: &mut R| -> Result<()> {
        if *v > 0.0 {
            *v = CouplingLaw::new(*v, sigma)?.sample(rng);
        }
        Ok(())
    };
    for k in &mut spec.kappa {
        for v in k.iter_mut().take(rails) {
            draw(v, rng)?;
        }
    }
    for a in &mut spec.alpha {
        draw(a, rng)?;
    }
    if include_g {
        for v in spec.g_left.iter_mut().take(rails) {
            draw(v, rng)?;
        }
        for v in spec.g_right.iter_mut().take(rails) {
            draw(v, rng)?;
        }
    }
    spec.validate()?;
    Ok(spec)
}

#[derive(Clone, Debug, PartialEq)]
pub struct DisorderEnsemble {
    pub base: ChannelSpec,
    pub sigma: f64,
    pub k: usize,
    pub seed: u64,
    pub grid: TimeGrid,
    /// E_Max per realization, in realization order.
    pub e_max: Vec<f64>,
    pub mean: f64,
    /// Sample standard deviation over √k; zero for σ = 0 or k = 1.
    pub std_err: f64,
}

/// Mean and standard error of E_Max over `k` log-normal disorder
/// realizations of `base`. σ = 0 runs the ideal spec once.
pub fn disorder_average(
    base: &ChannelSpec,
    sigma: f64,
    k: usize,
    seed: u64,
    include_g: bool,
    cfg: &SolverConfig,
) -> Result<DisorderEnsemble> {
    base.validate()?;
    if !(sigma.is_finite() && sigma >= 0.0) {
        return Err(Error::Domain(format!("sigma must be non-negative, got {sigma}")));
    }
    if k == 0 {
        return Err(Error::Usage("at least one realization is required".into()));
    }
    let grid = cfg.time_grid(base)?;
    let e_max = if sigma == 0.0 {
        vec![run_on_grid(base, cfg, grid)?.e_max; k]
    } else {
        (0..k as u64)
            .into_par_iter()
            .map(|i| {
                let spec = disordered_spec(base, sigma, include_g, &mut realization_rng(seed, i))?;
                run_on_grid(&spec, cfg, grid)
                    .map(|o| o.e_max)
                    .map_err(|e| annotate(e, &format!("realization {i}")))
            })
            .collect::<Result<Vec<_>>>()?
    };
    let (mean, std_err) = mean_and_error(&e_max);
    Ok(DisorderEnsemble {
        base: base.clone(),
        sigma,
        k,
        seed,
        grid,
        e_max,
        mean,
        std_err,
    })
}

/// Sample mean and standard error of the mean.
pub fn mean_and_error(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{khz_to_rate, spaced_spec, Rail};
    use proptest::prelude::*;

    const SPACING: f64 = 40.0 / 13.0;

    fn fixed(kind: GeometryKind, n: usize) -> ChannelSpec {
        spaced_spec(kind, n, SPACING, khz_to_rate(0.1), khz_to_rate(2.0)).unwrap()
    }

    fn quick() -> SolverConfig {
        SolverConfig {
            sample_every: 2,
            ..SolverConfig::default()
        }
    }

    #[test]
    fn auto_picks_backend_by_spin_count() {
        let cfg = SolverConfig::default();
        assert_eq!(cfg.backend(&fixed(GeometryKind::Ladder, 4)), SolverChoice::Dense);
        assert_eq!(cfg.backend(&fixed(GeometryKind::Ladder, 5)), SolverChoice::Tebd);
        assert_eq!(cfg.backend(&fixed(GeometryKind::Chain, 8)), SolverChoice::Dense);
        assert_eq!(cfg.backend(&fixed(GeometryKind::Chain, 9)), SolverChoice::Tebd);
        let holes = fixed(GeometryKind::Ladder, 5)
            .with_missing(vec![true, true, false, false, false, false, false, false, false, false])
            .unwrap();
        assert_eq!(cfg.backend(&holes), SolverChoice::Dense);
    }

    #[test]
    fn time_grid_scales_with_coupling() {
        let spec = fixed(GeometryKind::Chain, 3);
        let k = spec.max_coupling();
        let g = SolverConfig::default().time_grid(&spec).unwrap();
        assert!((g.dt - 0.01 / k).abs() < 1e-15);
        assert!((g.t_max - 7.5 / k).abs() < 1e-12);
        let fixed_grid = SolverConfig {
            dt: Some(0.002),
            t_max: Some(0.5),
            ..SolverConfig::default()
        };
        assert_eq!(fixed_grid.time_grid(&spec).unwrap(), TimeGrid { dt: 0.002, t_max: 0.5 });
    }

    #[test]
    fn weights_are_complete() {
        for &p in &[0.0, 0.1, 0.37, 0.5, 0.9, 1.0] {
            for m in 1..=8 {
                let total: f64 = (0..1usize << m)
                    .map(|i| binomial_weight(p, i.count_ones() as usize, m))
                    .sum();
                assert!((total - 1.0).abs() < 1e-14, "p={p} m={m} sum={total}");
            }
        }
        assert_eq!(binomial_weight(0.0, 0, 5), 1.0);
        assert_eq!(binomial_weight(1.0, 5, 5), 1.0);
        assert_eq!(binomial_weight(1.0, 4, 5), 0.0);
    }

    #[test]
    fn mask_strings_round_trip() {
        let m = vec![true, false, false, true];
        assert_eq!(mask_string(&m), "1001");
        assert_eq!(parse_mask("1001").unwrap(), m);
        assert!(parse_mask("10x").is_err());
        assert_eq!(mask_index(&mask_from_index(11, 4)), 11);
    }

    #[test]
    fn chain_missing_average_is_complete_channel_times_survival() {
        let base = fixed(GeometryKind::Chain, 3);
        let ens = missing_spin_average(&base, &[0.0, 0.25, 1.0], &quick()).unwrap();
        assert_eq!(ens.configs.len(), 8);
        let full = ens.configs[0].e_max;
        assert!(full > 0.1);
        for c in &ens.configs[1..] {
            assert_eq!(c.e_max, 0.0);
            assert!(!c.simulated);
        }
        assert_eq!(ens.averages[0], full);
        assert_eq!(ens.averages[2], 0.0);
        assert!((ens.averages[1] - 0.75f64.powi(3) * full).abs() < 1e-15);
    }

    #[test]
    fn disconnected_shortcut_matches_simulation() {
        let base = fixed(GeometryKind::Chain, 3);
        let spec = base.with_missing(vec![false, true, false]).unwrap();
        let out = run(&spec, &quick()).unwrap();
        assert!(out.e_max < 1e-9, "{}", out.e_max);
    }

    #[test]
    fn ladder_mirror_pairs_agree() {
        let base = fixed(GeometryKind::Ladder, 2);
        let cfg = quick();
        let grid = cfg.time_grid(&base).unwrap();
        let a = base.with_missing(vec![true, false, false, false]).unwrap();
        let b = base.with_missing(vec![false, true, false, false]).unwrap();
        let ea = run_on_grid(&a, &cfg, grid).unwrap().e_max;
        let eb = run_on_grid(&b, &cfg, grid).unwrap().e_max;
        assert!(ea > 0.01);
        assert!((ea - eb).abs() < 1e-6);
        let ens = missing_spin_average(&base, &[0.0, 0.3], &cfg).unwrap();
        assert_eq!(ens.e_max_of(&[true, false, false, false]), Some(ens.e_max_of(&[false, true, false, false]).unwrap()));
        assert!((ens.e_max_of(&[true, false, false, false]).unwrap() - ea).abs() < 1e-15);
        assert!(ens.configs.iter().filter(|c| c.simulated).count() < 16);
    }

    #[test]
    fn reweighting_matches_monte_carlo() {
        let base = fixed(GeometryKind::Chain, 3);
        let p = 0.2;
        let ens = missing_spin_average(&base, &[p], &quick()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let draws = 10_000;
        let xs: Vec<f64> = (0..draws)
            .map(|_| {
                let mask: Vec<bool> = (0..3).map(|_| rand::Rng::random::<f64>(&mut rng) < p).collect();
                ens.e_max_of(&mask).unwrap()
            })
            .collect();
        let (mean, se) = mean_and_error(&xs);
        assert!((mean - ens.averages[0]).abs() < 3.0 * se, "{mean} ± {se} vs {}", ens.averages[0]);
    }

    #[test]
    fn enumeration_guard() {
        let base = fixed(GeometryKind::Ladder, 8);
        assert!(matches!(
            missing_spin_average(&base, &[0.5], &quick()),
            Err(Error::Capability(_))
        ));
        assert!(missing_spin_average(&fixed(GeometryKind::Chain, 1), &[1.5], &quick()).is_err());
    }

    #[test]
    fn ratio_of_identical_ensembles_is_one() {
        let base = fixed(GeometryKind::Chain, 2);
        let ens = missing_spin_average(&base, &[0.0, 0.5, 1.0], &quick()).unwrap();
        let r = fig3_ratio(&ens, &ens).unwrap();
        assert_eq!(r.len(), 2);
        assert!(r.iter().all(|&(_, x)| x == 1.0));
        let mut other = ens.clone();
        other.p_grid = vec![0.0, 0.4, 1.0];
        assert!(fig3_ratio(&ens, &other).is_err());
    }

    #[test]
    fn lognormal_parameters() {
        // closed-form solution for mean 1, sd 0.3
        let law = CouplingLaw::new(1.0, 0.3).unwrap();
        assert!((law.mu + 0.043_088_8).abs() < 1e-6, "{}", law.mu);
        assert!((law.s - 0.293_560_4).abs() < 1e-6, "{}", law.s);
        let mean = (law.mu + 0.5 * law.s * law.s).exp();
        let var = ((law.s * law.s).exp() - 1.0) * (2.0 * law.mu + law.s * law.s).exp();
        assert!((mean - 1.0).abs() < 1e-14);
        assert!((var.sqrt() - 0.3).abs() < 1e-14);
        assert!(CouplingLaw::new(0.0, 0.1).is_err());
    }

    #[test]
    fn lognormal_sample_moments() {
        let law = CouplingLaw::new(5.6, 1.2).unwrap();
        let mut rng = realization_rng(3, 0);
        let xs: Vec<f64> = (0..100_000).map(|_| law.sample(&mut rng)).collect();
        let (mean, se) = mean_and_error(&xs);
        let sd = se * (xs.len() as f64).sqrt();
        assert!((mean - 5.6).abs() < 3.0 * se);
        assert!((sd / 1.2 - 1.0).abs() < 0.02);
        assert!(xs.iter().all(|&x| x > 0.0));
    }

    #[test]
    fn realization_streams_are_independent_of_order() {
        let base = fixed(GeometryKind::Ladder, 2);
        let a = disordered_spec(&base, 1.0, false, &mut realization_rng(9, 4)).unwrap();
        let _ = disordered_spec(&base, 1.0, false, &mut realization_rng(9, 3)).unwrap();
        let b = disordered_spec(&base, 1.0, false, &mut realization_rng(9, 4)).unwrap();
        assert_eq!(a, b);
        let c = disordered_spec(&base, 1.0, false, &mut realization_rng(9, 5)).unwrap();
        assert_ne!(a, c);
        assert_eq!(a.g_left, base.g_left);
        assert_ne!(a.alpha, base.alpha);
    }

    #[test]
    fn chain_disorder_leaves_top_rail_alone() {
        let base = fixed(GeometryKind::Chain, 4);
        let d = disordered_spec(&base, 2.0, true, &mut realization_rng(1, 0)).unwrap();
        assert!(d.kappa.iter().all(|k| k[Rail::T.index()] == 0.0));
        assert_ne!(d.g_left[0], base.g_left[0]);
    }

    #[test]
    fn zero_sigma_is_the_ideal_run() {
        let base = fixed(GeometryKind::Chain, 2);
        let ens = disorder_average(&base, 0.0, 5, 1, false, &quick()).unwrap();
        let ideal = run(&base, &quick()).unwrap().e_max;
        assert_eq!(ens.mean, ideal);
        assert_eq!(ens.std_err, 0.0);
        assert_eq!(ens.e_max.len(), 5);
    }

    #[test]
    fn disorder_is_reproducible_across_pool_sizes() {
        let base = fixed(GeometryKind::Chain, 2);
        let cfg = quick();
        let a = disorder_average(&base, 1.0, 6, 42, false, &cfg).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
        let b = pool.install(|| disorder_average(&base, 1.0, 6, 42, false, &cfg)).unwrap();
        assert_eq!(a, b);
        assert!(a.std_err > 0.0);
        assert!(a.e_max.iter().all(|&e| (0.0..=1.0).contains(&e)));
    }

    #[test]
    fn sweep_orders_points() {
        let cfg = quick();
        let pts = sweep_length(
            GeometryKind::Chain,
            &[1, 2],
            40.0,
            khz_to_rate(0.1),
            &[khz_to_rate(2.0), khz_to_rate(20.0)],
            &cfg,
        )
        .unwrap();
        let keys: Vec<_> = pts.iter().map(|p| (p.n, p.gamma_c)).collect();
        assert_eq!(
            keys,
            vec![
                (1, khz_to_rate(2.0)),
                (1, khz_to_rate(20.0)),
                (2, khz_to_rate(2.0)),
                (2, khz_to_rate(20.0))
            ]
        );
        for pair in pts.chunks(2) {
            assert!(pair[0].outcome.e_max >= pair[1].outcome.e_max - 1e-6);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn weights_sum_to_one(p in 0.0f64..=1.0, m in 1usize..=10) {
            let total: f64 = (0..=m)
                .map(|j| {
                    let c = (0..j).fold(1.0, |acc, i| acc * (m - i) as f64 / (i + 1) as f64);
                    c * binomial_weight(p, j, m)
                })
                .sum();
            prop_assert!((total - 1.0).abs() < 1e-13);
        }

        #[test]
        fn law_matches_requested_moments(mean in 0.1f64..10.0, rel in 0.0f64..2.0) {
            let law = CouplingLaw::new(mean, rel * mean).unwrap();
            let m = (law.mu + 0.5 * law.s * law.s).exp();
            let v = ((law.s * law.s).exp() - 1.0) * (2.0 * law.mu + law.s * law.s).exp();
            prop_assert!((m / mean - 1.0).abs() < 1e-12);
            prop_assert!((v.sqrt() - rel * mean).abs() < 1e-10 * mean);
        }
    }
}
