//! Two-qubit entanglement measures and the trajectory record.

use nalgebra::{Matrix4, SymmetricEigen};
use num_complex::Complex64 as C64;

use crate::error::{Error, Result};
use crate::model::ChannelSpec;

const HERMITICITY_TOL: f64 = 1e-9;
const TRACE_TOL: f64 = 1e-8;
/// Eigenvalues in `[-CLIP, 0)` are treated as round-off and clipped.
const CLIP: f64 = 1e-8;
const IMAG_TOL: f64 = 1e-9;

/// Validated two-qubit density matrix in the basis {↑↑, ↑↓, ↓↑, ↓↓}.
#[derive(Clone, Debug, PartialEq)]
pub struct TwoQubitState {
    rho: Matrix4<C64>,
}

impl TwoQubitState {
    /// Checks hermiticity and unit trace, symmetrizes, and clips tiny negative
    /// eigenvalues (renormalizing the trace afterwards).
    pub fn new(rho: Matrix4<C64>) -> Result<Self> {
        let herm = (rho - rho.adjoint()).iter().map(|z| z.norm()).fold(0.0, f64::max);
        if herm > HERMITICITY_TOL {
            return Err(Error::Diagnostics(format!(
                "two-qubit state is not Hermitian (deviation {herm:e})"
            )));
        }
        let tr = rho.trace();
        if (tr.re - 1.0).abs() > TRACE_TOL || tr.im.abs() > TRACE_TOL {
            return Err(Error::Diagnostics(format!("two-qubit state has trace {tr}")));
        }
        let sym = (rho + rho.adjoint()) * C64::new(0.5, 0.0);
        let eig = SymmetricEigen::new(sym);
        let min = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
        if min < -CLIP {
            return Err(Error::Diagnostics(format!(
                "two-qubit state has negative eigenvalue {min:e}"
            )));
        }
        if min >= 0.0 {
            return Ok(TwoQubitState { rho: sym });
        }
        let clipped = eig.eigenvalues.map(|v| v.max(0.0));
        let total: f64 = clipped.sum();
        let mut out = Matrix4::zeros();
        for k in 0..4 {
            let v = eig.eigenvectors.column(k);
            out += v * v.adjoint() * C64::new(clipped[k] / total, 0.0);
        }
        Ok(TwoQubitState { rho: out })
    }

    /// Divides by the trace before validating; for reduced states carrying a
    /// truncation-induced trace error.
    pub fn normalized(rho: Matrix4<C64>) -> Result<Self> {
        let tr = rho.trace();
        if tr.re.abs() < 1e-300 || !tr.re.is_finite() {
            return Err(Error::Diagnostics(format!("cannot normalize state with trace {tr}")));
        }
        Self::new(rho / tr)
    }

    pub fn matrix(&self) -> &Matrix4<C64> {
        &self.rho
    }
}

fn sigma_y_y() -> Matrix4<C64> {
    // σʸ⊗σʸ is real: anti-diagonal (-1, 1, 1, -1)
    let mut m = Matrix4::zeros();
    m[(0, 3)] = C64::new(-1.0, 0.0);
    m[(1, 2)] = C64::new(1.0, 0.0);
    m[(2, 1)] = C64::new(1.0, 0.0);
    m[(3, 0)] = C64::new(-1.0, 0.0);
    m
}

/// Wootters concurrence.
pub fn concurrence(state: &TwoQubitState) -> Result<f64> {
    let rho = state.rho;
    let yy = sigma_y_y();
    let tilde = yy * rho.map(|z| z.conj()) * yy;
    let product = rho * tilde;
    let eig = product
        .schur()
        .eigenvalues()
        .ok_or_else(|| Error::Numerical("Schur decomposition of ρρ̃ failed".into()))?;
    let mut roots = [0.0; 4];
    for (r, z) in roots.iter_mut().zip(eig.iter()) {
        if z.im.abs() > IMAG_TOL {
            return Err(Error::Diagnostics(format!(
                "spin-flipped product has complex eigenvalue {z}"
            )));
        }
        *r = z.re.max(0.0).sqrt();
    }
    roots.sort_by(|a, b| b.total_cmp(a));
    Ok((roots[0] - roots[1] - roots[2] - roots[3]).clamp(0.0, 1.0))
}

/// Binary entropy in bits with h(0) = h(1) = 0.
pub fn binary_entropy(x: f64) -> f64 {
    if x <= 0.0 || x >= 1.0 {
        return 0.0;
    }
    -x * x.log2() - (1.0 - x) * (1.0 - x).log2()
}

/// Entanglement of formation as a function of the concurrence.
pub fn eof_from_concurrence(c: f64) -> f64 {
    let c = c.clamp(0.0, 1.0);
    binary_entropy((1.0 + (1.0 - c * c).max(0.0).sqrt()) / 2.0).clamp(0.0, 1.0)
}

pub fn entanglement_of_formation(state: &TwoQubitState) -> Result<f64> {
    Ok(eof_from_concurrence(concurrence(state)?))
}

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum SolverId {
    Dense,
    Tebd,
}

impl SolverId {
    pub fn name(self) -> &'static str {
        match self {
            SolverId::Dense => "dense",
            SolverId::Tebd => "tebd",
        }
    }
}

/// What the fourth trajectory column holds.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum AuxQuantity {
    /// Tr ρ² (dense backend).
    Purity,
    /// Cumulative discarded squared singular-value weight (tensor backend).
    DiscardedWeight,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunMetadata {
    pub spec: ChannelSpec,
    pub solver: SolverId,
    pub dt: f64,
    pub t_max: f64,
    pub sample_every: usize,
    pub chi_max: Option<usize>,
    pub cutoff: Option<f64>,
    pub trotter_order: Option<u8>,
    pub seed: Option<u64>,
}

/// Sampled time series of one evolution.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub e: Vec<f64>,
    pub trace: Vec<f64>,
    pub aux: Vec<f64>,
    pub aux_kind: AuxQuantity,
    pub meta: RunMetadata,
}

impl Trajectory {
    pub fn new(aux_kind: AuxQuantity, meta: RunMetadata) -> Self {
        Trajectory {
            times: Vec::new(),
            e: Vec::new(),
            trace: Vec::new(),
            aux: Vec::new(),
            aux_kind,
            meta,
        }
    }

    pub fn push(&mut self, t: f64, e: f64, trace: f64, aux: f64) {
        self.times.push(t);
        self.e.push(e);
        self.trace.push(trace);
        self.aux.push(aux);
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

/// Maximum of E over the samples; ties go to the earliest time.
pub fn max_e(trajectory: &Trajectory) -> Result<(f64, f64)> {
    if trajectory.is_empty() {
        return Err(Error::Usage("max_e of an empty trajectory".into()));
    }
    let mut best = (trajectory.e[0], trajectory.times[0]);
    for (&e, &t) in trajectory.e.iter().zip(&trajectory.times) {
        if e > best.0 {
            best = (e, t);
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{uniform_spec, GeometryKind};
    use nalgebra::{Matrix2, Vector4};
    use proptest::prelude::*;

    fn c(re: f64) -> C64 {
        C64::new(re, 0.0)
    }

    fn singlet() -> Matrix4<C64> {
        let s = 1.0 / 2f64.sqrt();
        let v = Vector4::new(c(0.0), c(s), c(-s), c(0.0));
        v * v.adjoint()
    }

    fn werner(p: f64) -> Matrix4<C64> {
        singlet() * c(p) + Matrix4::identity() * c((1.0 - p) / 4.0)
    }

    fn eof(m: Matrix4<C64>) -> f64 {
        entanglement_of_formation(&TwoQubitState::new(m).unwrap()).unwrap()
    }

    #[test]
    fn bell_and_mixed() {
        let st = TwoQubitState::new(singlet()).unwrap();
        assert!((concurrence(&st).unwrap() - 1.0).abs() < 1e-12);
        assert!((eof(singlet()) - 1.0).abs() < 1e-12);
        let mixed = TwoQubitState::new(Matrix4::identity() * c(0.25)).unwrap();
        assert_eq!(concurrence(&mixed).unwrap(), 0.0);
        assert_eq!(eof(Matrix4::identity() * c(0.25)), 0.0);
    }

    #[test]
    fn werner_half() {
        // closed form max(0,(3p-1)/2) = 0.25; E = h((1+sqrt(15/16))/2)
        // evaluated at 30 digits: 0.117618873770917911667...
        let st = TwoQubitState::new(werner(0.5)).unwrap();
        assert!((concurrence(&st).unwrap() - 0.25).abs() < 1e-12);
        assert!((eof(werner(0.5)) - 0.117_618_873_770_917_9).abs() < 1e-12);
    }

    #[test]
    fn eof_endpoints() {
        assert_eq!(eof_from_concurrence(0.0), 0.0);
        assert!((eof_from_concurrence(1.0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn eof_monotone_in_concurrence() {
        let mut prev = -1.0;
        for k in 0..=1000 {
            let e = eof_from_concurrence(k as f64 / 1000.0);
            assert!(e > prev || k == 0, "not increasing at {k}");
            prev = e;
        }
    }

    #[test]
    fn rejects_non_hermitian() {
        let mut m = singlet();
        m[(0, 1)] = c(1e-3);
        assert!(matches!(TwoQubitState::new(m), Err(Error::Diagnostics(_))));
    }

    #[test]
    fn rejects_large_negativity() {
        let mut m = Matrix4::identity() * c(0.25);
        m[(0, 0)] = c(-1e-4);
        m[(1, 1)] = c(0.25 + 1e-4);
        assert!(TwoQubitState::new(m).is_err());
    }

    #[test]
    fn clipping_small_negativity_is_harmless() {
        let eps = 5e-9;
        let mut dipped = singlet();
        dipped[(0, 0)] = c(-eps);
        dipped[(3, 3)] = c(eps);
        assert!((eof(dipped) - 1.0).abs() < 1e-6);

        let base = werner(0.8);
        let mut nudged = base;
        nudged[(0, 0)] -= c(eps);
        nudged[(3, 3)] += c(eps);
        assert!((eof(nudged) - eof(base)).abs() < 1e-6);
    }

    fn random_unitary(a: f64, b: f64, cc: f64) -> Matrix2<C64> {
        let (s, co) = (b / 2.0).sin_cos();
        let e = |x: f64| C64::from_polar(1.0, x);
        Matrix2::new(e(a) * co, -e(cc) * s, e(-cc) * s, e(-a) * co)
    }

    fn kron(u: &Matrix2<C64>, v: &Matrix2<C64>) -> Matrix4<C64> {
        Matrix4::from_fn(|i, j| u[(i / 2, j / 2)] * v[(i % 2, j % 2)])
    }

    proptest! {
        #[test]
        fn local_unitaries_leave_entanglement_invariant(
            p in 0.0f64..1.0,
            a in 0.0f64..6.3, b in 0.0f64..3.2, cc in 0.0f64..6.3,
            d in 0.0f64..6.3, e in 0.0f64..3.2, f in 0.0f64..6.3,
        ) {
            let u = kron(&random_unitary(a, b, cc), &random_unitary(d, e, f));
            let rho = werner(p) * c(0.7) + {
                let v = Vector4::new(c(0.3), c(0.5), c(0.1), c(-0.8)).normalize();
                v * v.adjoint() * c(0.3)
            };
            let rotated = u * rho * u.adjoint();
            let s0 = TwoQubitState::new(rho).unwrap();
            let s1 = TwoQubitState::new(rotated).unwrap();
            prop_assert!((concurrence(&s0).unwrap() - concurrence(&s1).unwrap()).abs() < 1e-10);
            prop_assert!((entanglement_of_formation(&s0).unwrap()
                - entanglement_of_formation(&s1).unwrap()).abs() < 1e-10);
        }

        #[test]
        fn werner_matches_closed_form(p in 0.0f64..1.0) {
            let st = TwoQubitState::new(werner(p)).unwrap();
            let expect = ((3.0 * p - 1.0) / 2.0).max(0.0);
            prop_assert!((concurrence(&st).unwrap() - expect).abs() < 1e-10);
        }
    }

    fn meta() -> RunMetadata {
        RunMetadata {
            spec: uniform_spec(GeometryKind::Chain, 1, 40.0, 0.0, 0.0).unwrap(),
            solver: SolverId::Dense,
            dt: 0.1,
            t_max: 0.0,
            sample_every: 1,
            chi_max: None,
            cutoff: None,
            trotter_order: None,
            seed: None,
        }
    }

    #[test]
    fn max_e_ties_and_edges() {
        let mut tr = Trajectory::new(AuxQuantity::Purity, meta());
        assert!(max_e(&tr).is_err());
        tr.push(0.0, 0.0, 1.0, 1.0);
        assert_eq!(max_e(&tr).unwrap(), (0.0, 0.0));
        let mut dec = Trajectory::new(AuxQuantity::Purity, meta());
        for k in 0..5 {
            dec.push(k as f64, 1.0 - 0.1 * k as f64, 1.0, 1.0);
        }
        assert_eq!(max_e(&dec).unwrap(), (1.0, 0.0));
        let mut tie = Trajectory::new(AuxQuantity::Purity, meta());
        tie.push(0.0, 0.1, 1.0, 1.0);
        tie.push(1.0, 0.5, 1.0, 1.0);
        tie.push(2.0, 0.5, 1.0, 1.0);
        assert_eq!(max_e(&tie).unwrap(), (0.5, 1.0));
    }
}
