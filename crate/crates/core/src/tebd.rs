//! Trotterized evolution of the operator-space tensor state.
//!
//! Bond `b` couples sites `b` and `b+1`. Its local Liouvillian holds every
//! two-site term spanning the bond at full weight; terms living on a single
//! site (Zeeman, dissipators, the rung coupling of a ladder site) are shared
//! ½/½ between the two bonds of an interior site and go entirely to the only
//! bond of an end site. Even bonds form layer A and odd bonds layer B.
//! Order 2 uses `A(dt/2) B(dt) A(dt/2)` with adjacent A half-steps fused
//! between sample points; order 1 uses `A(dt) B(dt)`.

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;

use crate::basis::{operator_basis, superoperator_matrix};
use crate::dense::step_count;
use crate::error::{Error, Result};
use crate::model::{
    build_dissipators, build_hamiltonian, initial_state_spec, ChannelSpec, DissipatorOp,
    OneSiteOp, SiteLayout, SpinId, TwoSiteOp,
};
use crate::mpo::{TensorState, Truncation, DEFAULT_CUTOFF, GAUGE_TOLERANCE};
use crate::observables::{
    entanglement_of_formation, AuxQuantity, RunMetadata, SolverId, Trajectory, TwoQubitState,
};

pub const DEFAULT_ABORT_WEIGHT: f64 = 1e-3;
pub const DEFAULT_CONVERGENCE_TOL: f64 = 1e-4;

/// Trace drift that stops a run outright. Truncation moves the trace by
/// roughly the square root of the discarded weight, so this is a gross
/// failure alarm rather than a bound.
const TRACE_ALARM: f64 = 1e-2;

#[derive(Clone, Debug)]
pub struct BondGates {
    pub bond: usize,
    /// Local Liouvillian in the product operator basis.
    pub generator: DMatrix<f64>,
    pub full: DMatrix<f64>,
    /// `exp(L dt/2)`; present for layer A of an order-2 plan.
    pub half: Option<DMatrix<f64>>,
}

#[derive(Clone, Debug)]
pub struct TrotterPlan {
    pub dt: f64,
    pub order: u8,
    pub layer_a: Vec<BondGates>,
    pub layer_b: Vec<BondGates>,
}

/// Position of a spin in the joint space of sites `b` and `b+1`, or `None`.
fn bond_position(layout: &SiteLayout, bond: usize, spin: SpinId) -> Option<(usize, usize)> {
    let (site, pos) = layout.locate(spin)?;
    let left_spins = layout.sites[bond].spins.len();
    match site {
        s if s == bond => Some((s, pos)),
        s if s == bond + 1 => Some((s, left_spins + pos)),
        _ => None,
    }
}

/// Weight of a single-site term on `site` within the gate of `bond`.
fn site_share(n_sites: usize, site: usize, bond: usize) -> f64 {
    if site != bond && site != bond + 1 {
        return 0.0;
    }
    if site == 0 || site == n_sites - 1 {
        1.0
    } else {
        0.5
    }
}

fn pauli_x(n: usize, k: usize) -> DMatrix<C64> {
    let dim = 1usize << n;
    let m = 1usize << (n - 1 - k);
    DMatrix::from_fn(dim, dim, |r, c| if r == c ^ m { C64::new(1.0, 0.0) } else { C64::new(0.0, 0.0) })
}

fn bond_generator(spec: &ChannelSpec, layout: &SiteLayout, bond: usize) -> Result<DMatrix<f64>> {
    let n_sites = layout.len();
    let spins_here = layout.sites[bond].spins.len() + layout.sites[bond + 1].spins.len();
    let dim = 1usize << spins_here;
    let zero = C64::new(0.0, 0.0);
    let mut h = DMatrix::from_element(dim, dim, zero);
    let bit = |p: usize| 1usize << (spins_here - 1 - p);
    let terms = build_hamiltonian(spec);
    for t in &terms.two_site {
        let (Some((sa, pa)), Some((sb, pb))) =
            (bond_position(layout, bond, t.a), bond_position(layout, bond, t.b))
        else {
            continue;
        };
        let w = if sa != sb { 1.0 } else { site_share(n_sites, sa, bond) };
        if w == 0.0 {
            continue;
        }
        match t.op {
            TwoSiteOp::FlipFlop => {
                let m = bit(pa) | bit(pb);
                for x in 0..dim {
                    if (x & m).count_ones() == 1 {
                        h[(x ^ m, x)] += C64::new(w * t.strength, 0.0);
                    }
                }
            }
        }
    }
    for t in &terms.one_site {
        let Some((s, p)) = bond_position(layout, bond, t.spin) else {
            continue;
        };
        let w = site_share(n_sites, s, bond);
        match t.op {
            OneSiteOp::Sz => {
                for x in 0..dim {
                    let sign = if x & bit(p) == 0 { 1.0 } else { -1.0 };
                    h[(x, x)] += C64::new(w * sign * t.strength, 0.0);
                }
            }
        }
    }
    let mut jumps = Vec::new();
    for d in build_dissipators(spec) {
        let Some((s, p)) = bond_position(layout, bond, d.spin) else {
            continue;
        };
        let w = site_share(n_sites, s, bond);
        match d.op {
            DissipatorOp::Sx => jumps.push((pauli_x(spins_here, p), w * d.rate)),
        }
    }
    let minus_i = C64::new(0.0, -1.0);
    let liouvillian = |x: &DMatrix<C64>| -> DMatrix<C64> {
        let mut out = (&h * x - x * &h) * minus_i;
        for (l, g) in &jumps {
            out += (l * x * l - x) * C64::new(*g, 0.0);
        }
        out
    };
    let ba = operator_basis(layout.sites[bond].dim())?;
    let bb = operator_basis(layout.sites[bond + 1].dim())?;
    Ok(superoperator_matrix(&ba, &bb, liouvillian))
}

fn exp_scaled(generator: &DMatrix<f64>, tau: f64) -> Result<DMatrix<f64>> {
    let g = (generator * tau).exp();
    if g.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numerical("gate exponential is not finite".into()));
    }
    Ok(g)
}

pub fn build_trotter_plan(spec: &ChannelSpec, layout: &SiteLayout, dt: f64, order: u8) -> Result<TrotterPlan> {
    if !(dt.is_finite() && dt > 0.0) {
        return Err(Error::Usage(format!("time step must be positive, got {dt}")));
    }
    if order != 1 && order != 2 {
        return Err(Error::Usage(format!("Trotter order must be 1 or 2, got {order}")));
    }
    let mut layer_a = Vec::new();
    let mut layer_b = Vec::new();
    for bond in 0..layout.len() - 1 {
        let generator = bond_generator(spec, layout, bond)?;
        let full = exp_scaled(&generator, dt)?;
        if bond % 2 == 0 {
            let half = if order == 2 { Some(exp_scaled(&generator, dt / 2.0)?) } else { None };
            layer_a.push(BondGates { bond, generator, full, half });
        } else {
            layer_b.push(BondGates { bond, generator, full, half: None });
        }
    }
    Ok(TrotterPlan { dt, order, layer_a, layer_b })
}

#[derive(Clone, Copy)]
enum Which {
    Full,
    Half,
}

impl TrotterPlan {
    fn apply_layer(&self, state: &mut TensorState, a: bool, which: Which) -> Result<f64> {
        let layer = if a { &self.layer_a } else { &self.layer_b };
        let mut discarded = 0.0;
        for g in layer {
            let m = match which {
                Which::Full => &g.full,
                Which::Half => g.half.as_ref().unwrap_or(&g.full),
            };
            discarded += state.apply_two_site_superoperator(g.bond, m)?;
        }
        Ok(discarded)
    }

    /// Advances `steps` full time steps; returns the discarded weight.
    pub fn advance(&self, state: &mut TensorState, steps: usize) -> Result<f64> {
        let mut w = 0.0;
        if steps == 0 {
            return Ok(0.0);
        }
        match self.order {
            1 => {
                for _ in 0..steps {
                    w += self.apply_layer(state, true, Which::Full)?;
                    w += self.apply_layer(state, false, Which::Full)?;
                    w += maintain_gauge(state)?;
                }
            }
            _ => {
                w += self.apply_layer(state, true, Which::Half)?;
                for k in 0..steps {
                    w += self.apply_layer(state, false, Which::Full)?;
                    let which = if k + 1 == steps { Which::Half } else { Which::Full };
                    w += self.apply_layer(state, true, which)?;
                    w += maintain_gauge(state)?;
                }
            }
        }
        Ok(w)
    }
}

fn maintain_gauge(state: &mut TensorState) -> Result<f64> {
    if state.gauge_error() > GAUGE_TOLERANCE {
        state.canonicalize()
    } else {
        Ok(0.0)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TebdConfig {
    pub dt: f64,
    pub t_max: f64,
    pub sample_every: usize,
    pub chi_max: usize,
    pub cutoff: f64,
    pub order: u8,
    /// Cumulative discarded weight at which the run is abandoned.
    pub abort_weight: f64,
}

impl TebdConfig {
    pub fn new(dt: f64, t_max: f64, chi_max: usize) -> Self {
        TebdConfig {
            dt,
            t_max,
            sample_every: 1,
            chi_max,
            cutoff: DEFAULT_CUTOFF,
            order: 2,
            abort_weight: DEFAULT_ABORT_WEIGHT,
        }
    }
}

fn sample(state: &TensorState, discarded: f64) -> Result<(f64, f64)> {
    let tr = state.global_trace();
    if !tr.is_finite() {
        return Err(Error::Numerical(format!("trace is {tr}")));
    }
    if (tr - 1.0).abs() > TRACE_ALARM {
        return Err(Error::Convergence {
            message: format!(
                "trace drifted to {tr} (discarded weight {discarded:e}); increase chi_max or lower cutoff"
            ),
            history: vec![discarded],
        });
    }
    let red = state.reduce_pair(SpinId::Ancilla, SpinId::NvRight)?;
    let e = entanglement_of_formation(&TwoQubitState::normalized(red)?)?;
    Ok((e, tr))
}

/// Evolves the singlet initial state and records E(ancilla, NV_R), the
/// global trace and the cumulative discarded weight.
pub fn evolve_tebd(spec: &ChannelSpec, cfg: &TebdConfig) -> Result<Trajectory> {
    spec.validate()?;
    let steps = step_count(cfg.dt, cfg.t_max)?;
    if cfg.sample_every == 0 {
        return Err(Error::Usage("sample_every must be at least 1".into()));
    }
    if cfg.chi_max == 0 {
        return Err(Error::Usage("chi_max must be at least 1".into()));
    }
    if !(cfg.cutoff >= 0.0 && cfg.cutoff < 1.0) {
        return Err(Error::Usage(format!("cutoff must lie in [0, 1), got {}", cfg.cutoff)));
    }
    let layout = SiteLayout::new(&spec.geometry);
    let plan = build_trotter_plan(spec, &layout, cfg.dt, cfg.order)?;
    let mut state = TensorState::encode_product_state(&layout, &initial_state_spec())?
        .with_truncation(Truncation {
            chi_max: cfg.chi_max,
            cutoff: cfg.cutoff,
        });
    let meta = RunMetadata {
        spec: spec.clone(),
        solver: SolverId::Tebd,
        dt: cfg.dt,
        t_max: cfg.t_max,
        sample_every: cfg.sample_every,
        chi_max: Some(cfg.chi_max),
        cutoff: Some(cfg.cutoff),
        trotter_order: Some(cfg.order),
        seed: None,
    };
    let mut traj = Trajectory::new(AuxQuantity::DiscardedWeight, meta);
    let mut discarded = 0.0;
    let mut done = 0;
    loop {
        let (e, tr) = sample(&state, discarded)?;
        traj.push(done as f64 * cfg.dt, e, tr, discarded);
        if done >= steps {
            break;
        }
        let chunk = cfg.sample_every.min(steps - done);
        discarded += plan.advance(&mut state, chunk)?;
        done += chunk;
        if discarded > cfg.abort_weight {
            return Err(Error::Convergence {
                message: format!(
                    "discarded weight {discarded:e} exceeds {:e} at t = {} µs with chi_max = {}; increase chi_max",
                    cfg.abort_weight,
                    done as f64 * cfg.dt,
                    cfg.chi_max
                ),
                history: vec![discarded],
            });
        }
    }
    Ok(traj)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvergenceReport {
    pub chis: Vec<usize>,
    /// `max_t |E_chi − E_prev|` for each chi after the first; infinite when
    /// either run aborted.
    pub deviations: Vec<f64>,
    pub converged_chi: usize,
}

fn max_deviation(a: &Trajectory, b: &Trajectory) -> f64 {
    a.e.iter().zip(&b.e).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Runs [`evolve_tebd`] over an increasing chi schedule until successive
/// trajectories agree within `tol`.
pub fn converge_chi(
    spec: &ChannelSpec,
    cfg: &TebdConfig,
    schedule: &[usize],
    tol: f64,
) -> Result<(Trajectory, ConvergenceReport)> {
    if schedule.len() < 2 || schedule.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Usage(
            "chi schedule needs at least two strictly increasing values".into(),
        ));
    }
    let run = |chi: usize| -> Result<Option<Trajectory>> {
        match evolve_tebd(spec, &TebdConfig { chi_max: chi, ..cfg.clone() }) {
            Ok(t) => Ok(Some(t)),
            Err(Error::Convergence { .. }) => Ok(None),
            Err(e) => Err(e),
        }
    };
    let mut prev = run(schedule[0])?;
    let mut deviations = Vec::new();
    for (i, &chi) in schedule.iter().enumerate().skip(1) {
        let cur = run(chi)?;
        let dev = match (&prev, &cur) {
            (Some(p), Some(c)) => max_deviation(p, c),
            _ => f64::INFINITY,
        };
        deviations.push(dev);
        if dev < tol {
            let report = ConvergenceReport {
                chis: schedule[..=i].to_vec(),
                deviations,
                converged_chi: chi,
            };
            return Ok((cur.expect("finite deviation implies a trajectory"), report));
        }
        prev = cur;
    }
    Err(Error::Convergence {
        message: format!(
            "E(t) still changed by {:e} between chi = {} and chi = {}",
            deviations.last().copied().unwrap_or(f64::INFINITY),
            schedule[schedule.len() - 2],
            schedule[schedule.len() - 1]
        ),
        history: deviations,
    })
}
