//! Physical description of the NV–channel–NV system.
//!
//! Everything here is expressed in canonical internal units: Hamiltonian
//! coefficients in rad/µs, Lindblad rates in 1/µs and times in µs. Conversion
//! from laboratory units (nm, MHz, kHz) happens at the boundary through the
//! helpers in this module.
//!
//! Two channel geometries are supported. A *chain* is a single line of `N`
//! impurity spins; a *ladder* has `N` rungs of two spins each, the bottom (B)
//! and top (T) rails. The left NV couples to the first site of every rail and
//! the right NV to the last; an ancilla, never coupled to anything, starts in
//! a singlet with the left NV.

use std::collections::{BTreeSet, VecDeque};
use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Vacuum permeability (N/A²), CODATA 2018.
pub const MU_0: f64 = 1.256_637_062_12e-6;
/// Magnitude of the free-electron g-factor, CODATA 2018.
pub const ELECTRON_G: f64 = 2.002_319_304_362_56;
/// Bohr magneton (J/T), CODATA 2018.
pub const BOHR_MAGNETON: f64 = 9.274_010_078_3e-24;
/// Reduced Planck constant (J s), CODATA 2018.
pub const HBAR: f64 = 1.054_571_817e-34;

/// Converts an ordinary frequency in MHz to an angular frequency in rad/µs.
pub fn mhz_to_angular(f_mhz: f64) -> f64 {
    2.0 * PI * f_mhz
}

/// Inverse of [`mhz_to_angular`].
pub fn angular_to_mhz(w: f64) -> f64 {
    w / (2.0 * PI)
}

/// Converts a decay rate quoted in kHz to µs⁻¹. Rates are treated like the
/// couplings, as ordinary frequencies carrying a factor 2π.
pub fn khz_to_rate(r_khz: f64) -> f64 {
    2.0 * PI * r_khz * 1e-3
}

/// Inverse of [`khz_to_rate`].
pub fn rate_to_khz(r: f64) -> f64 {
    r * 1e3 / (2.0 * PI)
}

/// Magnetic dipole coupling `μ0 ge² μB² / (8π r³ ħ)` between two electron
/// spins a distance `r_nm` nanometres apart, in rad/µs.
pub fn dipolar_coupling(r_nm: f64) -> Result<f64> {
    if !r_nm.is_finite() || r_nm <= 0.0 {
        return Err(Error::Domain(format!(
            "spin separation must be positive and finite, got {r_nm} nm"
        )));
    }
    let r = r_nm * 1e-9;
    let energy = MU_0 * ELECTRON_G * ELECTRON_G * BOHR_MAGNETON * BOHR_MAGNETON
        / (8.0 * PI * r * r * r);
    Ok(energy / HBAR * 1e-6)
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash)]
pub enum GeometryKind {
    Chain,
    Ladder,
}

impl GeometryKind {
    pub fn name(self) -> &'static str {
        match self {
            GeometryKind::Chain => "chain",
            GeometryKind::Ladder => "ladder",
        }
    }
}

impl std::str::FromStr for GeometryKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "chain" => Ok(GeometryKind::Chain),
            "ladder" => Ok(GeometryKind::Ladder),
            other => Err(format!("unknown geometry `{other}` (expected chain or ladder)")),
        }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash)]
pub struct Geometry {
    pub kind: GeometryKind,
    pub n_channel: usize,
}

impl Geometry {
    pub fn new(kind: GeometryKind, n_channel: usize) -> Result<Self> {
        if n_channel == 0 {
            return Err(Error::Domain("channel must contain at least one site".into()));
        }
        Ok(Geometry { kind, n_channel })
    }

    pub fn rails(&self) -> &'static [Rail] {
        match self.kind {
            GeometryKind::Chain => &[Rail::B],
            GeometryKind::Ladder => &[Rail::B, Rail::T],
        }
    }

    /// Number of channel spins `M` (ancilla and NVs excluded).
    pub fn channel_spins(&self) -> usize {
        self.n_channel * self.rails().len()
    }

    /// Channel spins in canonical order: site-major, B before T.
    pub fn channel_spin_ids(&self) -> Vec<SpinId> {
        let rails = self.rails();
        (1..=self.n_channel)
            .flat_map(|site| rails.iter().map(move |&rail| SpinId::Channel { site, rail }))
            .collect()
    }

    /// Position of a channel spin in [`Geometry::channel_spin_ids`].
    pub fn channel_index(&self, site: usize, rail: Rail) -> Option<usize> {
        if site == 0 || site > self.n_channel {
            return None;
        }
        match (self.kind, rail) {
            (GeometryKind::Chain, Rail::B) => Some(site - 1),
            (GeometryKind::Chain, Rail::T) => None,
            (GeometryKind::Ladder, r) => Some(2 * (site - 1) + r.index()),
        }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Rail {
    B,
    T,
}

impl Rail {
    pub fn index(self) -> usize {
        match self {
            Rail::B => 0,
            Rail::T => 1,
        }
    }

    pub fn flipped(self) -> Rail {
        match self {
            Rail::B => Rail::T,
            Rail::T => Rail::B,
        }
    }
}

/// Identity of a physical spin-1/2. Channel sites are numbered from 1.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SpinId {
    Ancilla,
    NvLeft,
    Channel { site: usize, rail: Rail },
    NvRight,
    Dummy,
}

impl SpinId {
    pub fn label(&self) -> String {
        match self {
            SpinId::Ancilla => "ancilla".into(),
            SpinId::NvLeft => "nv_left".into(),
            SpinId::Channel { site, rail } => format!("c{site}{rail:?}"),
            SpinId::NvRight => "nv_right".into(),
            SpinId::Dummy => "dummy".into(),
        }
    }
}

/// Complete parameter set of one simulated channel, in canonical units.
///
/// Per-rail arrays are indexed by [`Rail::index`]; for chains only the B
/// entries are read. `kappa[i]` holds the bond between sites `i+1` and `i+2`.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelSpec {
    pub geometry: Geometry,
    pub epsilon: f64,
    pub g_left: [f64; 2],
    pub g_right: [f64; 2],
    pub kappa: Vec<[f64; 2]>,
    pub alpha: Vec<f64>,
    pub gamma_nv: f64,
    pub gamma_c: f64,
    /// Missing flags in [`Geometry::channel_spin_ids`] order.
    pub missing: Vec<bool>,
}

impl ChannelSpec {
    pub fn validate(&self) -> Result<()> {
        let n = self.geometry.n_channel;
        if n == 0 {
            return Err(Error::Domain("channel must contain at least one site".into()));
        }
        if self.kappa.len() != n - 1 {
            return Err(Error::Usage(format!(
                "expected {} horizontal couplings, got {}",
                n - 1,
                self.kappa.len()
            )));
        }
        let expected_alpha = match self.geometry.kind {
            GeometryKind::Chain => 0,
            GeometryKind::Ladder => n,
        };
        if self.alpha.len() != expected_alpha {
            return Err(Error::Usage(format!(
                "expected {expected_alpha} rung couplings, got {}",
                self.alpha.len()
            )));
        }
        if self.missing.len() != self.geometry.channel_spins() {
            return Err(Error::Usage(format!(
                "missing mask has {} entries, channel has {} spins",
                self.missing.len(),
                self.geometry.channel_spins()
            )));
        }
        let magnitudes = self
            .g_left
            .iter()
            .chain(&self.g_right)
            .chain(self.kappa.iter().flatten())
            .chain(&self.alpha)
            .chain([&self.gamma_nv, &self.gamma_c]);
        for &v in magnitudes {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Domain(format!(
                    "couplings and rates must be finite and non-negative, got {v}"
                )));
            }
        }
        if !self.epsilon.is_finite() {
            return Err(Error::Domain("epsilon must be finite".into()));
        }
        Ok(())
    }

    pub fn is_missing(&self, spin: SpinId) -> bool {
        match spin {
            SpinId::Channel { site, rail } => self
                .geometry
                .channel_index(site, rail)
                .map(|i| self.missing[i])
                .unwrap_or(true),
            _ => false,
        }
    }

    /// Number of missing channel spins.
    pub fn missing_count(&self) -> usize {
        self.missing.iter().filter(|&&m| m).count()
    }

    /// Returns a copy with the given missing mask.
    pub fn with_missing(&self, missing: Vec<bool>) -> Result<Self> {
        let spec = ChannelSpec {
            missing,
            ..self.clone()
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Largest Hamiltonian coupling magnitude, used as the reference
    /// frequency for default time steps.
    pub fn max_coupling(&self) -> f64 {
        self.g_left
            .iter()
            .chain(&self.g_right)
            .chain(self.kappa.iter().flatten())
            .chain(&self.alpha)
            .fold(0.0_f64, |m, &v| m.max(v))
    }

    /// Whether exchanging the B and T rails maps the spec onto itself
    /// (ignoring the missing mask).
    pub fn is_rail_symmetric(&self) -> bool {
        match self.geometry.kind {
            GeometryKind::Chain => true,
            GeometryKind::Ladder => {
                self.g_left[0] == self.g_left[1]
                    && self.g_right[0] == self.g_right[1]
                    && self.kappa.iter().all(|k| k[0] == k[1])
            }
        }
    }

    /// Copy with the B and T rails exchanged.
    pub fn rail_flipped(&self) -> Self {
        let mut out = self.clone();
        if self.geometry.kind == GeometryKind::Ladder {
            out.g_left.swap(0, 1);
            out.g_right.swap(0, 1);
            for k in &mut out.kappa {
                k.swap(0, 1);
            }
            out.missing = flip_mask(&self.geometry, &self.missing);
        }
        out
    }
}

/// Applies the B↔T reflection to a ladder missing mask.
pub fn flip_mask(geometry: &Geometry, mask: &[bool]) -> Vec<bool> {
    match geometry.kind {
        GeometryKind::Chain => mask.to_vec(),
        GeometryKind::Ladder => mask
            .chunks(2)
            .flat_map(|pair| [pair[1], pair[0]])
            .collect(),
    }
}

/// Uniform channel between two NVs `separation_nm` apart: `N` equally spaced
/// channel sites, all couplings equal to the dipolar coupling at spacing
/// `separation/(N+1)`, zero Zeeman splitting and nothing missing.
pub fn uniform_spec(
    kind: GeometryKind,
    n: usize,
    separation_nm: f64,
    gamma_nv: f64,
    gamma_c: f64,
) -> Result<ChannelSpec> {
    if !separation_nm.is_finite() || separation_nm <= 0.0 {
        return Err(Error::Domain(format!(
            "NV separation must be positive, got {separation_nm} nm"
        )));
    }
    spaced_spec(kind, n, separation_nm / (n as f64 + 1.0), gamma_nv, gamma_c)
}

/// Uniform channel with a fixed inter-spin spacing (the channel grows with `n`).
pub fn spaced_spec(
    kind: GeometryKind,
    n: usize,
    spacing_nm: f64,
    gamma_nv: f64,
    gamma_c: f64,
) -> Result<ChannelSpec> {
    let geometry = Geometry::new(kind, n)?;
    let c = dipolar_coupling(spacing_nm)?;
    let (g_pair, alpha) = match kind {
        GeometryKind::Chain => ([c, 0.0], Vec::new()),
        GeometryKind::Ladder => ([c, c], vec![c; n]),
    };
    let spec = ChannelSpec {
        geometry,
        epsilon: 0.0,
        g_left: g_pair,
        g_right: g_pair,
        kappa: vec![g_pair; n - 1],
        alpha,
        gamma_nv,
        gamma_c,
        missing: vec![false; geometry.channel_spins()],
    };
    spec.validate()?;
    Ok(spec)
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash)]
pub enum OneSiteOp {
    /// Pauli σᶻ.
    Sz,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash)]
pub enum TwoSiteOp {
    /// σ⁺σ⁻ + σ⁻σ⁺.
    FlipFlop,
}

#[derive(Copy, Clone, Debug, PartialEq)]
pub struct OneSiteTerm {
    pub spin: SpinId,
    pub op: OneSiteOp,
    pub strength: f64,
}

#[derive(Copy, Clone, Debug, PartialEq)]
pub struct TwoSiteTerm {
    pub a: SpinId,
    pub b: SpinId,
    pub op: TwoSiteOp,
    pub strength: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct HamiltonianTerms {
    pub one_site: Vec<OneSiteTerm>,
    pub two_site: Vec<TwoSiteTerm>,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash)]
pub enum DissipatorOp {
    /// Pauli σˣ.
    Sx,
}

#[derive(Copy, Clone, Debug, PartialEq)]
pub struct Dissipator {
    pub spin: SpinId,
    pub op: DissipatorOp,
    pub rate: f64,
}

/// Hamiltonian term list. Zero-strength terms and terms touching missing
/// spins are not emitted.
pub fn build_hamiltonian(spec: &ChannelSpec) -> HamiltonianTerms {
    let n = spec.geometry.n_channel;
    let rails = spec.geometry.rails();
    let mut terms = HamiltonianTerms::default();

    if spec.epsilon != 0.0 {
        for spin in [SpinId::NvLeft, SpinId::NvRight] {
            terms.one_site.push(OneSiteTerm {
                spin,
                op: OneSiteOp::Sz,
                strength: spec.epsilon / 2.0,
            });
        }
    }

    let mut bond = |a: SpinId, b: SpinId, strength: f64| {
        if strength != 0.0 && !spec.is_missing(a) && !spec.is_missing(b) {
            terms.two_site.push(TwoSiteTerm {
                a,
                b,
                op: TwoSiteOp::FlipFlop,
                strength,
            });
        }
    };
    let ch = |site, rail| SpinId::Channel { site, rail };

    for &rail in rails {
        bond(SpinId::NvLeft, ch(1, rail), spec.g_left[rail.index()]);
    }
    for site in 1..=n {
        if spec.geometry.kind == GeometryKind::Ladder {
            bond(ch(site, Rail::B), ch(site, Rail::T), spec.alpha[site - 1]);
        }
        if site < n {
            for &rail in rails {
                bond(ch(site, rail), ch(site + 1, rail), spec.kappa[site - 1][rail.index()]);
            }
        }
    }
    for &rail in rails {
        bond(ch(n, rail), SpinId::NvRight, spec.g_right[rail.index()]);
    }
    terms
}

/// σˣ dissipators on both NVs (rate γ_NV) and every present channel spin
/// (rate γ_C). Zero rates are omitted.
pub fn build_dissipators(spec: &ChannelSpec) -> Vec<Dissipator> {
    let mut out = Vec::new();
    let mut push = |spin, rate: f64| {
        if rate != 0.0 {
            out.push(Dissipator {
                spin,
                op: DissipatorOp::Sx,
                rate,
            });
        }
    };
    push(SpinId::NvLeft, spec.gamma_nv);
    for spin in spec.geometry.channel_spin_ids() {
        if !spec.is_missing(spin) {
            push(spin, spec.gamma_c);
        }
    }
    push(SpinId::NvRight, spec.gamma_nv);
    out
}

/// Whether the left and right NVs are connected by a path of Hamiltonian
/// bonds. When they are not, no excitation can reach the right NV.
pub fn nv_connected(terms: &HamiltonianTerms) -> bool {
    let mut seen = BTreeSet::from([SpinId::NvLeft]);
    let mut queue = VecDeque::from([SpinId::NvLeft]);
    while let Some(s) = queue.pop_front() {
        if s == SpinId::NvRight {
            return true;
        }
        for t in &terms.two_site {
            let next = if t.a == s {
                t.b
            } else if t.b == s {
                t.a
            } else {
                continue;
            };
            if seen.insert(next) {
                queue.push_back(next);
            }
        }
    }
    false
}

/// Single-spin initial states.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum LocalState {
    Down,
    /// Half of the singlet |Ψ⁻⟩ = (|↑↓⟩ − |↓↑⟩)/√2 shared with another spin.
    SingletWith(SpinId),
}

/// Symbolic description of the initial product state.
#[derive(Clone, Debug, PartialEq)]
pub struct InitialState {
    pub singlet: (SpinId, SpinId),
}

impl InitialState {
    pub fn local(&self, spin: SpinId) -> LocalState {
        if spin == self.singlet.0 {
            LocalState::SingletWith(self.singlet.1)
        } else if spin == self.singlet.1 {
            LocalState::SingletWith(self.singlet.0)
        } else {
            LocalState::Down
        }
    }
}

/// Ancilla and left NV in |Ψ⁻⟩, every other spin down.
pub fn initial_state_spec() -> InitialState {
    InitialState {
        singlet: (SpinId::Ancilla, SpinId::NvLeft),
    }
}

/// One lattice site of the tensor-network layout: one spin (d = 2) or a pair
/// of spins (d = 4, first spin is the more significant factor).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Site {
    pub spins: Vec<SpinId>,
}

impl Site {
    pub fn dim(&self) -> usize {
        1 << self.spins.len()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SiteLayout {
    pub kind: GeometryKind,
    pub sites: Vec<Site>,
}

impl SiteLayout {
    /// Chain: `[ancilla, NV_L, c1 … cN, NV_R]`; ladder:
    /// `[(ancilla NV_L), rung1 … rungN, (NV_R dummy)]`.
    pub fn new(geometry: &Geometry) -> Self {
        let one = |s| Site { spins: vec![s] };
        let mut sites = Vec::new();
        match geometry.kind {
            GeometryKind::Chain => {
                sites.push(one(SpinId::Ancilla));
                sites.push(one(SpinId::NvLeft));
                for site in 1..=geometry.n_channel {
                    sites.push(one(SpinId::Channel { site, rail: Rail::B }));
                }
                sites.push(one(SpinId::NvRight));
            }
            GeometryKind::Ladder => {
                sites.push(Site {
                    spins: vec![SpinId::Ancilla, SpinId::NvLeft],
                });
                for site in 1..=geometry.n_channel {
                    sites.push(Site {
                        spins: vec![
                            SpinId::Channel { site, rail: Rail::B },
                            SpinId::Channel { site, rail: Rail::T },
                        ],
                    });
                }
                sites.push(Site {
                    spins: vec![SpinId::NvRight, SpinId::Dummy],
                });
            }
        }
        SiteLayout {
            kind: geometry.kind,
            sites,
        }
    }

    pub fn len(&self) -> usize {
        self.sites.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sites.is_empty()
    }

    pub fn dims(&self) -> Vec<usize> {
        self.sites.iter().map(Site::dim).collect()
    }

    /// `(site index, position within site)` of a spin.
    pub fn locate(&self, spin: SpinId) -> Option<(usize, usize)> {
        self.sites.iter().enumerate().find_map(|(i, s)| {
            s.spins.iter().position(|&x| x == spin).map(|p| (i, p))
        })
    }

    /// All spins in layout order, dummy excluded. This is the spin order of
    /// the dense backend.
    pub fn dense_spins(&self) -> Vec<SpinId> {
        self.sites
            .iter()
            .flat_map(|s| s.spins.iter().copied())
            .filter(|&s| s != SpinId::Dummy)
            .collect()
    }

    /// Total number of simulated spins in the tensor layout (dummy included).
    pub fn total_spins(&self) -> usize {
        self.sites.iter().map(|s| s.spins.len()).sum()
    }
}
