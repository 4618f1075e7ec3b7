//! Direct integration of the master equation on the full Hilbert space.
//!
//! The density matrix is stored row-major over the spins of
//! [`SiteLayout::dense_spins`], first spin most significant, local index 0 = ↑
//! and 1 = ↓. The Lindblad generator is never materialized: flip-flop terms
//! are applied by index arithmetic, σˣ dissipators by bit flips of both row
//! and column index (`D[σˣ]ρ = σˣρσˣ − ρ`).
//!
//! Flip-flop terms conserve the number of up spins and σˣ flips the row and
//! column parity together, so the set of entries with equal row and column
//! parity is invariant. Evolutions started from the singlet initial state only
//! ever touch that half of the matrix, and the integrator skips the rest.

use nalgebra::{DMatrix, Matrix4};
use num_complex::Complex64 as C64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{
    build_dissipators, build_hamiltonian, initial_state_spec, ChannelSpec, Dissipator,
    HamiltonianTerms, InitialState, LocalState, OneSiteOp, SiteLayout, SpinId, TwoSiteOp,
};
use crate::observables::{
    entanglement_of_formation, AuxQuantity, RunMetadata, SolverId, Trajectory, TwoQubitState,
};

/// Default refusal threshold of the dense backend (Hilbert dimension 2¹¹).
pub const DEFAULT_MAX_DENSE_SPINS: usize = 11;

const TRACE_DRIFT_LIMIT: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct DenseState {
    spins: Vec<SpinId>,
    dim: usize,
    data: Vec<C64>,
}

impl DenseState {
    pub fn zeros(spins: Vec<SpinId>) -> Self {
        let dim = 1usize << spins.len();
        DenseState {
            spins,
            dim,
            data: vec![C64::new(0.0, 0.0); dim * dim],
        }
    }

    /// Builds the product state described by `init` over `spins`.
    pub fn from_initial(spins: Vec<SpinId>, init: &InitialState) -> Result<Self> {
        let n = spins.len();
        let bit = |s: SpinId| -> Result<usize> {
            spins
                .iter()
                .position(|&x| x == s)
                .map(|k| 1usize << (n - 1 - k))
                .ok_or_else(|| Error::Usage(format!("spin {} not in dense layout", s.label())))
        };
        let all_down = (1usize << n) - 1;
        let mut amps: Vec<(usize, f64)> = Vec::new();
        let (a, b) = init.singlet;
        if init.local(a) != LocalState::SingletWith(b) {
            return Err(Error::Usage("inconsistent singlet description".into()));
        }
        let (ba, bb) = (bit(a)?, bit(b)?);
        let s = std::f64::consts::FRAC_1_SQRT_2;
        // |↑↓⟩ − |↓↑⟩ with ↑ = bit cleared
        amps.push((all_down ^ ba, s));
        amps.push((all_down ^ bb, -s));
        let mut state = DenseState::zeros(spins);
        for &(i, ai) in &amps {
            for &(j, aj) in &amps {
                state.data[i * state.dim + j] = C64::new(ai * aj, 0.0);
            }
        }
        Ok(state)
    }

    pub fn from_matrix(spins: Vec<SpinId>, m: &DMatrix<C64>) -> Result<Self> {
        let dim = 1usize << spins.len();
        if m.nrows() != dim || m.ncols() != dim {
            return Err(Error::Usage(format!(
                "matrix is {}x{}, layout needs {dim}x{dim}",
                m.nrows(),
                m.ncols()
            )));
        }
        let mut s = DenseState::zeros(spins);
        for i in 0..dim {
            for j in 0..dim {
                s.data[i * dim + j] = m[(i, j)];
            }
        }
        Ok(s)
    }

    pub fn to_matrix(&self) -> DMatrix<C64> {
        DMatrix::from_fn(self.dim, self.dim, |i, j| self.data[i * self.dim + j])
    }

    pub fn spins(&self) -> &[SpinId] {
        &self.spins
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, i: usize, j: usize) -> C64 {
        self.data[i * self.dim + j]
    }

    pub fn trace(&self) -> C64 {
        (0..self.dim).map(|i| self.data[i * self.dim + i]).sum()
    }

    /// Tr ρ², assuming ρ is Hermitian.
    pub fn purity(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum()
    }

    /// max |ρ − ρ†|.
    pub fn hermiticity_error(&self) -> f64 {
        let d = self.dim;
        let mut worst = 0.0_f64;
        for i in 0..d {
            for j in i..d {
                let e = (self.data[i * d + j] - self.data[j * d + i].conj()).norm();
                worst = worst.max(e);
            }
        }
        worst
    }

    /// Smallest eigenvalue of the Hermitian part; O(D³), for spot checks.
    pub fn min_eigenvalue(&self) -> f64 {
        let m = self.to_matrix();
        let h = (&m + m.adjoint()) * C64::new(0.5, 0.0);
        h.symmetric_eigenvalues().iter().copied().fold(f64::INFINITY, f64::min)
    }

    fn position(&self, s: SpinId) -> Result<usize> {
        self.spins
            .iter()
            .position(|&x| x == s)
            .ok_or_else(|| Error::Usage(format!("spin {} not in dense layout", s.label())))
    }

    /// Reduced density matrix of two spins, basis index `2·s_first + s_second`.
    pub fn reduce_pair(&self, first: SpinId, second: SpinId) -> Result<Matrix4<C64>> {
        let (p, q) = (self.position(first)?, self.position(second)?);
        if p == q {
            return Err(Error::Usage("reduce_pair needs two distinct spins".into()));
        }
        let n = self.spins.len();
        let (bp, bq) = (n - 1 - p, n - 1 - q);
        let mut out = Matrix4::zeros();
        for rest in 0..(1usize << (n - 2)) {
            // spread `rest` over the bits other than bp and bq
            let mut base = 0usize;
            let mut k = 0;
            for bit in 0..n {
                if bit == bp || bit == bq {
                    continue;
                }
                base |= ((rest >> k) & 1) << bit;
                k += 1;
            }
            for x in 0..4usize {
                let row = base | ((x >> 1) << bp) | ((x & 1) << bq);
                for y in 0..4usize {
                    let col = base | ((y >> 1) << bp) | ((y & 1) << bq);
                    out[(x, y)] += self.data[row * self.dim + col];
                }
            }
        }
        Ok(out)
    }

    fn is_parity_block_diagonal(&self) -> bool {
        let d = self.dim;
        (0..d).all(|i| {
            (0..d).all(|j| {
                (i.count_ones() + j.count_ones()) % 2 == 0 || self.data[i * d + j] == C64::new(0.0, 0.0)
            })
        })
    }
}

/// Matrix-free Lindblad generator over a fixed spin ordering.
///
/// In sectored mode the generator works in a relabeled basis where the most
/// significant bit (the first spin, which no term may touch) is replaced by
/// the parity of the full index. Flip-flop masks are unchanged by this
/// relabeling, dissipator masks pick up the top bit, and the two invariant
/// parity blocks become the contiguous diagonal blocks of the matrix.
struct Generator {
    dim: usize,
    sectored: bool,
    /// CSR list, per basis index, of (partner index, coupling) over flip-flop
    /// terms whose two bits differ at that index.
    offsets: Vec<usize>,
    partners: Vec<(usize, f64)>,
    /// Diagonal energies from σᶻ terms; empty when there are none.
    energy: Vec<f64>,
    /// (index mask, rate) per dissipator.
    flips: Vec<(usize, f64)>,
    total_rate: f64,
}

fn as_reals(z: &[C64]) -> &[f64] {
    // SAFETY: Complex<f64> is repr(C) with two f64 fields and no padding
    unsafe { std::slice::from_raw_parts(z.as_ptr().cast::<f64>(), z.len() * 2) }
}

fn as_reals_mut(z: &mut [C64]) -> &mut [f64] {
    // SAFETY: as in `as_reals`
    unsafe { std::slice::from_raw_parts_mut(z.as_mut_ptr().cast::<f64>(), z.len() * 2) }
}

/// `y += a·x` over interleaved real views.
fn axpy(y: &mut [C64], a: f64, x: &[C64]) {
    for (y, &x) in as_reals_mut(y).iter_mut().zip(as_reals(x)) {
        *y += a * x;
    }
}

fn parity(x: usize) -> usize {
    (x.count_ones() & 1) as usize
}

impl Generator {
    fn new(
        spins: &[SpinId],
        terms: &HamiltonianTerms,
        dissipators: &[Dissipator],
        sectored: bool,
    ) -> Result<Self> {
        let n = spins.len();
        let dim = 1usize << n;
        let top = dim >> 1;
        let bit = |s: SpinId| -> Result<usize> {
            spins
                .iter()
                .position(|&x| x == s)
                .map(|k| 1usize << (n - 1 - k))
                .ok_or_else(|| {
                    Error::Usage(format!("term references spin {} outside the state", s.label()))
                })
        };
        let untouched_top = |mask: usize| -> Result<()> {
            if sectored && mask & top != 0 {
                return Err(Error::Usage(format!(
                    "sectored evolution requires {} to be free of terms",
                    spins[0].label()
                )));
            }
            Ok(())
        };
        let mut masks = Vec::new();
        for t in &terms.two_site {
            match t.op {
                TwoSiteOp::FlipFlop => {
                    let m = bit(t.a)? | bit(t.b)?;
                    untouched_top(m)?;
                    masks.push((m, t.strength));
                }
            }
        }
        let mut energy = Vec::new();
        if !terms.one_site.is_empty() {
            energy = vec![0.0; dim];
            for t in &terms.one_site {
                let b = bit(t.spin)?;
                untouched_top(b)?;
                match t.op {
                    OneSiteOp::Sz => {
                        // σᶻ reads a bit below the top one, identical in both labelings
                        for (idx, e) in energy.iter_mut().enumerate() {
                            *e += if idx & b == 0 { t.strength } else { -t.strength };
                        }
                    }
                }
            }
        }
        let mut offsets = Vec::with_capacity(dim + 1);
        let mut partners = Vec::new();
        offsets.push(0);
        for idx in 0..dim {
            for &(m, c) in &masks {
                if (idx & m).count_ones() == 1 {
                    partners.push((idx ^ m, c));
                }
            }
            offsets.push(partners.len());
        }
        let mut flips = Vec::new();
        for d in dissipators {
            let b = bit(d.spin)?;
            untouched_top(b)?;
            flips.push((if sectored { b | top } else { b }, d.rate));
        }
        let total_rate = flips.iter().map(|f| f.1).sum();
        Ok(Generator {
            dim,
            sectored,
            offsets,
            partners,
            energy,
            flips,
            total_rate,
        })
    }

    /// Standard index to working index.
    fn relabel(&self, x: usize) -> usize {
        if !self.sectored {
            return x;
        }
        let top = self.dim >> 1;
        (x & !top) | if parity(x) == 1 { top } else { 0 }
    }

    /// Copies a standard-order matrix into working order.
    fn to_working(&self, data: &[C64]) -> Vec<C64> {
        let d = self.dim;
        let map: Vec<usize> = (0..d).map(|x| self.relabel(x)).collect();
        let mut out = vec![C64::new(0.0, 0.0); d * d];
        for (i, &ri) in map.iter().enumerate() {
            for (j, &rj) in map.iter().enumerate() {
                out[ri * d + rj] = data[i * d + j];
            }
        }
        out
    }

    /// Copies a working-order matrix back into standard order.
    fn from_working(&self, work: &[C64], out: &mut [C64]) {
        let d = self.dim;
        let map: Vec<usize> = (0..d).map(|x| self.relabel(x)).collect();
        for (i, &ri) in map.iter().enumerate() {
            for (j, &rj) in map.iter().enumerate() {
                out[i * d + j] = work[ri * d + rj];
            }
        }
    }

    fn partners(&self, idx: usize) -> &[(usize, f64)] {
        &self.partners[self.offsets[idx]..self.offsets[idx + 1]]
    }

    fn col_range(&self, a: usize) -> std::ops::Range<usize> {
        let half = self.dim >> 1;
        match (self.sectored, a < half) {
            (false, _) => 0..self.dim,
            (true, true) => 0..half,
            (true, false) => half..self.dim,
        }
    }

    /// Row `a` of `Hρ` over the row's column range.
    fn h_row(&self, a: usize, rho: &[C64], k_row: &mut [C64]) {
        let d = self.dim;
        let range = self.col_range(a);
        let out = &mut k_row[range.clone()];
        out.iter_mut().for_each(|x| *x = C64::new(0.0, 0.0));
        for &(p, c) in self.partners(a) {
            axpy(out, c, &rho[p * d + range.start..p * d + range.end]);
        }
    }

    /// Diagonal blocks of `kt` become the conjugate transpose of those of `k`.
    fn adjoint_blocks(&self, k: &[C64], kt: &mut [C64]) {
        const TILE: usize = 32;
        let d = self.dim;
        let blocks: &[(usize, usize)] = if self.sectored {
            &[(0, d / 2), (d / 2, d)]
        } else {
            &[(0, d)]
        };
        for &(lo, hi) in blocks {
            kt[lo * d..hi * d]
                .par_chunks_mut(TILE * d)
                .enumerate()
                .for_each(|(t, rows)| {
                    let r0 = lo + t * TILE;
                    let nrows = rows.len() / d;
                    for c0 in (lo..hi).step_by(TILE) {
                        let c1 = (c0 + TILE).min(hi);
                        for i in 0..nrows {
                            let row = &mut rows[i * d..(i + 1) * d];
                            for j in c0..c1 {
                                row[j] = k[j * d + r0 + i].conj();
                            }
                        }
                    }
                });
        }
    }

    fn row(&self, a: usize, rho: &[C64], k: &[C64], kt: &[C64], out_row: &mut [C64]) {
        let d = self.dim;
        let range = self.col_range(a);
        let (lo, len) = (range.start, range.len());
        let out = &mut out_row[range.clone()];
        let src = &rho[a * d + lo..a * d + range.end];
        let ka = &k[a * d + lo..a * d + range.end];
        let kta = &kt[a * d + lo..a * d + range.end];

        // −i(Hρ − ρH) with ρH = (Hρ)†, minus Γρ
        let gamma = self.total_rate;
        for (((o, r), x), y) in as_reals_mut(out)
            .chunks_exact_mut(2)
            .zip(as_reals(src).chunks_exact(2))
            .zip(as_reals(ka).chunks_exact(2))
            .zip(as_reals(kta).chunks_exact(2))
        {
            o[0] = (x[1] - y[1]) - gamma * r[0];
            o[1] = (y[0] - x[0]) - gamma * r[1];
        }
        if !self.energy.is_empty() {
            let ea = self.energy[a];
            for ((o, &r), &eb) in out.iter_mut().zip(src).zip(&self.energy[range.clone()]) {
                *o += r * C64::new(0.0, -(ea - eb));
            }
        }
        // Σ γ σˣρσˣ: row a^M, columns permuted by b → b^M, which swaps
        // aligned runs of length `m` inside the source block
        for &(mask, g) in &self.flips {
            let src_row = a ^ mask;
            let src_lo = lo ^ (mask & !(len - 1));
            let other = &rho[src_row * d + src_lo..src_row * d + src_lo + len];
            let m = mask & (len - 1);
            if m == 0 {
                axpy(out, g, other);
                continue;
            }
            for c in (0..len).step_by(2 * m) {
                let (o1, o2) = out[c..c + 2 * m].split_at_mut(m);
                let (s1, s2) = other[c..c + 2 * m].split_at(m);
                axpy(o1, g, s2);
                axpy(o2, g, s1);
            }
        }
    }

    fn apply(&self, rho: &[C64], out: &mut [C64], scratch: &mut Scratch) {
        let d = self.dim;
        let Scratch { k, kt } = scratch;
        k.par_chunks_mut(d)
            .enumerate()
            .for_each(|(a, k_row)| self.h_row(a, rho, k_row));
        self.adjoint_blocks(k, kt);
        let (k, kt) = (&*k, &*kt);
        out.par_chunks_mut(d)
            .enumerate()
            .for_each(|(a, out_row)| self.row(a, rho, k, kt, out_row));
    }
}

struct Scratch {
    k: Vec<C64>,
    kt: Vec<C64>,
}

impl Scratch {
    fn new(len: usize) -> Self {
        Scratch {
            k: vec![C64::new(0.0, 0.0); len],
            kt: vec![C64::new(0.0, 0.0); len],
        }
    }
}

/// Right-hand side `−i[H,ρ] + Σ γ D[σˣ]ρ` of the master equation, evaluated
/// without materializing H or the superoperator. `rho` is assumed Hermitian.
pub fn lindblad_rhs(
    rho: &DenseState,
    terms: &HamiltonianTerms,
    dissipators: &[Dissipator],
) -> Result<DenseState> {
    let gen = Generator::new(&rho.spins, terms, dissipators, false)?;
    let mut out = DenseState::zeros(rho.spins.clone());
    let mut scratch = Scratch::new(out.data.len());
    gen.apply(&rho.data, &mut out.data, &mut scratch);
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct DenseConfig {
    pub dt: f64,
    pub t_max: f64,
    pub sample_every: usize,
    pub max_spins: usize,
}

impl DenseConfig {
    pub fn new(dt: f64, t_max: f64) -> Self {
        DenseConfig {
            dt,
            t_max,
            sample_every: 1,
            max_spins: DEFAULT_MAX_DENSE_SPINS,
        }
    }
}

pub(crate) fn step_count(dt: f64, t_max: f64) -> Result<usize> {
    if !(dt.is_finite() && dt > 0.0) {
        return Err(Error::Usage(format!("time step must be positive, got {dt}")));
    }
    if !(t_max.is_finite() && t_max >= 0.0) {
        return Err(Error::Usage(format!("t_max must be non-negative, got {t_max}")));
    }
    Ok((t_max / dt).round() as usize)
}

struct Rk4 {
    k: Vec<C64>,
    tmp: Vec<C64>,
    acc: Vec<C64>,
    scratch: Scratch,
}

impl Rk4 {
    fn new(len: usize) -> Self {
        let z = vec![C64::new(0.0, 0.0); len];
        Rk4 {
            k: z.clone(),
            tmp: z.clone(),
            acc: z,
            scratch: Scratch::new(len),
        }
    }

    fn step(&mut self, gen: &Generator, rho: &mut Vec<C64>, dt: f64) {
        let stages = [(0.5, 1.0 / 6.0), (0.5, 1.0 / 3.0), (1.0, 1.0 / 3.0), (0.0, 1.0 / 6.0)];
        gen.apply(rho, &mut self.k, &mut self.scratch);
        self.acc.copy_from_slice(rho);
        for (s, &(next, weight)) in stages.iter().enumerate() {
            let (w, h) = (weight * dt, next * dt);
            let last = s == stages.len() - 1;
            axpy(&mut self.acc, w, &self.k);
            if !last {
                for ((t, &r), &k) in as_reals_mut(&mut self.tmp)
                    .iter_mut()
                    .zip(as_reals(rho))
                    .zip(as_reals(&self.k))
                {
                    *t = r + h * k;
                }
                gen.apply(&self.tmp, &mut self.k, &mut self.scratch);
            }
        }
        std::mem::swap(rho, &mut self.acc);
    }
}

fn sample(state: &DenseState) -> Result<(f64, f64, f64)> {
    let tr = state.trace();
    let purity = state.purity();
    if !tr.re.is_finite() || !purity.is_finite() || purity > 1.0 + 1e-6 {
        return Err(Error::Numerical(format!(
            "dense integration became unstable (purity {purity}); reduce dt"
        )));
    }
    if (tr.re - 1.0).abs() > TRACE_DRIFT_LIMIT {
        return Err(Error::IntegrationAccuracy(format!(
            "trace drifted to {}; reduce dt",
            tr.re
        )));
    }
    let red = state.reduce_pair(SpinId::Ancilla, SpinId::NvRight)?;
    let e = entanglement_of_formation(&TwoQubitState::new(red)?)?;
    Ok((e, tr.re, purity))
}

/// Spins the dense backend simulates: the layout order without the dummy and
/// without missing channel spins, which carry no terms and stay in |↓⟩.
pub fn active_spins(spec: &ChannelSpec) -> Vec<SpinId> {
    SiteLayout::new(&spec.geometry)
        .dense_spins()
        .into_iter()
        .filter(|&s| !spec.is_missing(s))
        .collect()
}

/// Evolves the singlet initial state with fixed-step RK4 and records
/// E(ancilla, NV_R), Tr ρ and Tr ρ² every `sample_every` steps.
pub fn evolve_dense(spec: &ChannelSpec, cfg: &DenseConfig) -> Result<Trajectory> {
    spec.validate()?;
    let steps = step_count(cfg.dt, cfg.t_max)?;
    if cfg.sample_every == 0 {
        return Err(Error::Usage("sample_every must be at least 1".into()));
    }
    let spins = active_spins(spec);
    if spins.len() > cfg.max_spins {
        return Err(Error::Capability(format!(
            "dense backend limited to {} spins, system has {}; use the tensor backend",
            cfg.max_spins,
            spins.len()
        )));
    }
    let terms = build_hamiltonian(spec);
    let dissipators = build_dissipators(spec);
    let mut state = DenseState::from_initial(spins.clone(), &initial_state_spec())?;
    debug_assert!(state.is_parity_block_diagonal());
    let gen = Generator::new(&spins, &terms, &dissipators, true)?;

    let meta = RunMetadata {
        spec: spec.clone(),
        solver: SolverId::Dense,
        dt: cfg.dt,
        t_max: cfg.t_max,
        sample_every: cfg.sample_every,
        chi_max: None,
        cutoff: None,
        trotter_order: None,
        seed: None,
    };
    let mut traj = Trajectory::new(AuxQuantity::Purity, meta);
    let mut work = gen.to_working(&state.data);
    let mut rk = Rk4::new(work.len());
    for step in 0..=steps {
        if step % cfg.sample_every == 0 {
            gen.from_working(&work, &mut state.data);
            let (e, tr, purity) = sample(&state)?;
            traj.push(step as f64 * cfg.dt, e, tr, purity);
        }
        if step < steps {
            rk.step(&gen, &mut work, cfg.dt);
        }
    }
    Ok(traj)
}

/// Evolves with the dense backend and returns the final state, for
/// cross-checks against the tensor backend.
pub fn evolve_dense_state(spec: &ChannelSpec, dt: f64, steps: usize) -> Result<DenseState> {
    spec.validate()?;
    let layout = SiteLayout::new(&spec.geometry);
    let spins = layout.dense_spins();
    let gen = Generator::new(&spins, &build_hamiltonian(spec), &build_dissipators(spec), true)?;
    let mut state = DenseState::from_initial(spins, &initial_state_spec())?;
    let mut work = gen.to_working(&state.data);
    let mut rk = Rk4::new(work.len());
    for _ in 0..steps {
        rk.step(&gen, &mut work, dt);
    }
    gen.from_working(&work, &mut state.data);
    Ok(state)
}
