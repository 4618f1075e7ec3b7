//! Matrix-product representation of the density matrix in a Hermitian
//! operator basis.
//!
//! The state is `scale · B⁰ B¹ … Bⁿ⁻¹` where each `Bⁱ = Γⁱλⁱ` has indices
//! (left bond, operator index, right bond) and all coefficients are real.
//! Bond weights `λⁱ` are kept normalized to `Σ λ² = 1`; the overall
//! Frobenius norm of the coefficient vector lives in `scale`.
//!
//! Gates are applied without inverting any λ: the two-site block
//! `θ = G·BⁱBⁱ⁺¹` is weighted on the left by `λⁱ⁻¹`, split by SVD into
//! `U S Vᵀ`, and the site tensors become `Bⁱ⁺¹ = Vᵀ`, `Bⁱ = θV/‖S‖`.

use faer::linalg::solvers::Svd;
use faer::{Mat, MatRef};
use nalgebra::{DMatrix, DVector, Matrix4};
use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::basis::{operator_basis, OperatorBasis};
use crate::error::{Error, Result};
use crate::model::{InitialState, LocalState, SiteLayout, SpinId};

/// Default relative singular-value cutoff.
pub const DEFAULT_CUTOFF: f64 = 1e-14;

/// Gauge error above which [`TensorState::canonicalize`] is worth running.
pub const GAUGE_TOLERANCE: f64 = 1e-8;

const TIE_TOLERANCE: f64 = 1e-12;

/// Extra columns sampled beyond `chi_max` by the randomized SVD.
const OVERSAMPLE: usize = 16;
const POWER_ITERATIONS: usize = 4;
const SKETCH_SEED: u64 = 0x5eed;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Truncation {
    pub chi_max: usize,
    /// Singular values below `cutoff · s_max` are dropped.
    pub cutoff: f64,
}

impl Default for Truncation {
    fn default() -> Self {
        Truncation {
            chi_max: usize::MAX,
            cutoff: DEFAULT_CUTOFF,
        }
    }
}

impl Truncation {
    /// Number of singular values to keep and the relative squared weight of
    /// the rest. `s` must be sorted in descending order.
    pub fn rank(&self, s: &[f64]) -> (usize, f64) {
        if s.is_empty() || s[0] <= 0.0 {
            return (s.len().min(1), 0.0);
        }
        let top = s[0];
        let mut k = s.iter().take_while(|&&x| x >= self.cutoff * top).count().max(1);
        while k < s.len() && s[k - 1] - s[k] <= TIE_TOLERANCE * top {
            k += 1;
        }
        k = k.min(self.chi_max.max(1));
        let total: f64 = s.iter().map(|x| x * x).sum();
        let dropped: f64 = s[k..].iter().map(|x| x * x).sum();
        (k, dropped / total)
    }

    /// As [`rank`](Self::rank) when `s` holds only the leading singular
    /// values of a matrix with squared Frobenius norm `total`.
    pub fn rank_leading(&self, s: &[f64], total: f64) -> (usize, f64) {
        let (k, _) = self.rank(s);
        let known: f64 = s.iter().map(|x| x * x).sum();
        let dropped: f64 = s[k..].iter().map(|x| x * x).sum::<f64>() + (total - known).max(0.0);
        (k, dropped / total)
    }
}

/// One site tensor, row-major over (left, operator, right).
#[derive(Clone, Debug, PartialEq)]
pub struct SiteTensor {
    pub left: usize,
    pub q: usize,
    pub right: usize,
    pub data: Vec<f64>,
}

impl SiteTensor {
    fn at(&self, a: usize, s: usize, b: usize) -> f64 {
        self.data[(a * self.q + s) * self.right + b]
    }

    /// View as a `(left·q) × right` matrix.
    fn as_left_grouped(&self) -> MatRef<'_, f64> {
        MatRef::from_row_major_slice(&self.data, self.left * self.q, self.right)
    }

    /// View as a `left × (q·right)` matrix.
    fn as_right_grouped(&self) -> MatRef<'_, f64> {
        MatRef::from_row_major_slice(&self.data, self.left, self.q * self.right)
    }

    fn from_mat(left: usize, q: usize, right: usize, m: MatRef<'_, f64>) -> Self {
        let (rows, cols) = (m.nrows(), m.ncols());
        let mut data = vec![0.0; rows * cols];
        for j in 0..cols {
            for i in 0..rows {
                data[i * cols + j] = m[(i, j)];
            }
        }
        debug_assert_eq!(data.len(), left * q * right);
        SiteTensor { left, q, right, data }
    }

    /// `Σ_s v[s] B[:, s, :]`, a `left × right` matrix.
    fn contract_physical(&self, v: &[f64]) -> Mat<f64> {
        Mat::from_fn(self.left, self.right, |a, b| {
            (0..self.q).map(|s| v[s] * self.at(a, s, b)).sum()
        })
    }
}

#[derive(Clone, Debug)]
pub struct TensorState {
    layout: SiteLayout,
    dims: Vec<usize>,
    tensors: Vec<SiteTensor>,
    lambdas: Vec<Vec<f64>>,
    scale: f64,
    truncation: Truncation,
    basis2: OperatorBasis,
    basis4: OperatorBasis,
}

fn svd(m: MatRef<'_, f64>, context: impl FnOnce() -> String) -> Result<Svd<f64>> {
    if m.col_iter().any(|c| c.iter().any(|x| !x.is_finite())) {
        return Err(Error::Numerical(format!("non-finite tensor entries at {}", context())));
    }
    m.thin_svd()
        .map_err(|e| Error::Numerical(format!("SVD failed at {}: {e:?}", context())))
}

fn sorted_singular_values(f: &Svd<f64>) -> Vec<f64> {
    let s: Vec<f64> = f.S().column_vector().iter().copied().collect();
    debug_assert!(s.windows(2).all(|w| w[0] >= w[1]));
    s
}

fn orthonormal_columns(a: MatRef<'_, f64>) -> Mat<f64> {
    a.qr().compute_thin_Q()
}

/// Singular values (descending), right singular vectors and squared
/// Frobenius norm of `m`.
///
/// When `keep` is small next to the matrix only the leading
/// `keep + OVERSAMPLE` triplets are computed, by a randomized range finder
/// with power iterations. The sketch is seeded so results are reproducible.
fn right_svd(
    m: MatRef<'_, f64>,
    keep: usize,
    context: impl FnOnce() -> String,
) -> Result<(Vec<f64>, Mat<f64>, f64)> {
    let width = keep.saturating_add(OVERSAMPLE);
    if width.saturating_mul(2) > m.nrows().min(m.ncols()) {
        let f = svd(m, context)?;
        let s = sorted_singular_values(&f);
        let total = s.iter().map(|x| x * x).sum();
        return Ok((s, f.V().to_owned(), total));
    }
    let total = m.squared_norm_l2();
    if !total.is_finite() {
        return Err(Error::Numerical(format!("non-finite tensor entries at {}", context())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(SKETCH_SEED);
    let draws: Vec<f64> = (0..m.nrows() * width).map(|_| rng.sample(StandardNormal)).collect();
    let omega = MatRef::from_column_major_slice(&draws, m.nrows(), width);
    let mut z = m.transpose() * omega;
    for _ in 0..POWER_ITERATIONS {
        let q = orthonormal_columns(z.as_ref());
        let w = orthonormal_columns((m * &q).as_ref());
        z = m.transpose() * &w;
    }
    let q = orthonormal_columns(z.as_ref());
    let f = svd((m * &q).as_ref(), context)?;
    let s = sorted_singular_values(&f);
    Ok((s, &q * f.V(), total))
}

/// Pure state vector over `spins` (first most significant, index 0 = ↑).
fn local_pure_state(spins: &[SpinId], init: &InitialState) -> Result<DVector<C64>> {
    let n = spins.len();
    let dim = 1usize << n;
    let all_down = dim - 1;
    let bit = |k: usize| 1usize << (n - 1 - k);
    let mut psi = DVector::from_element(dim, C64::new(0.0, 0.0));
    let singlet_pos: Vec<usize> = (0..n)
        .filter(|&k| matches!(init.local(spins[k]), LocalState::SingletWith(_)))
        .collect();
    match singlet_pos.as_slice() {
        [] => psi[all_down] = C64::new(1.0, 0.0),
        [p, q] => {
            let s = std::f64::consts::FRAC_1_SQRT_2;
            let (first, second) = if spins[*p] == init.singlet.0 { (*p, *q) } else { (*q, *p) };
            psi[all_down ^ bit(first)] = C64::new(s, 0.0);
            psi[all_down ^ bit(second)] = C64::new(-s, 0.0);
        }
        _ => {
            return Err(Error::Usage(
                "singlet partners must lie within one or two adjacent sites".into(),
            ))
        }
    }
    Ok(psi)
}

impl TensorState {
    /// Encodes a product over sites, with the singlet pair either inside one
    /// site or across one bond.
    pub fn encode_product_state(layout: &SiteLayout, init: &InitialState) -> Result<Self> {
        let dims = layout.dims();
        let n = dims.len();
        if n < 2 {
            return Err(Error::Usage("tensor state needs at least two sites".into()));
        }
        let mut st = TensorState {
            layout: layout.clone(),
            dims: dims.clone(),
            tensors: Vec::with_capacity(n),
            lambdas: vec![vec![1.0]; n - 1],
            scale: 1.0,
            truncation: Truncation::default(),
            basis2: operator_basis(2)?,
            basis4: operator_basis(4)?,
        };
        let site_of = |s: SpinId| layout.locate(s).map(|x| x.0);
        let (sa, sb) = match (site_of(init.singlet.0), site_of(init.singlet.1)) {
            (Some(a), Some(b)) => (a.min(b), a.max(b)),
            _ => return Err(Error::Usage("singlet spins missing from layout".into())),
        };
        if sb > sa + 1 {
            return Err(Error::Usage("singlet partners must lie on adjacent sites".into()));
        }
        let mut i = 0;
        while i < n {
            if sb == sa + 1 && i == sa {
                let spins: Vec<SpinId> = layout.sites[i]
                    .spins
                    .iter()
                    .chain(&layout.sites[i + 1].spins)
                    .copied()
                    .collect();
                let psi = local_pure_state(&spins, init)?;
                let rho = &psi * psi.adjoint();
                let (bl, br) = (st.basis(i).clone(), st.basis(i + 1).clone());
                let (ql, qr) = (bl.len(), br.len());
                let coeff = Mat::from_fn(ql, qr, |m, k| {
                    let op = bl.element(m).kronecker(br.element(k));
                    crate::basis::trace_product(&op, &rho).re
                });
                let f = svd(coeff.as_ref(), || format!("initial bond {i}"))?;
                let s = sorted_singular_values(&f);
                let (k, _) = Truncation::default().rank(&s);
                let norm = s[..k].iter().map(|x| x * x).sum::<f64>().sqrt();
                let us = Mat::from_fn(ql, k, |r, c| f.U()[(r, c)] * s[c] / norm);
                let vt = Mat::from_fn(k, qr, |r, c| f.V()[(c, r)]);
                st.tensors.push(SiteTensor::from_mat(1, ql, k, us.as_ref()));
                st.tensors.push(SiteTensor::from_mat(k, qr, 1, vt.as_ref()));
                st.lambdas[i] = s[..k].iter().map(|x| x / norm).collect();
                st.scale *= norm;
                i += 2;
            } else {
                let psi = local_pure_state(&layout.sites[i].spins, init)?;
                let rho = &psi * psi.adjoint();
                let c = st.basis(i).coefficients(&rho);
                let norm = c.iter().map(|x| x * x).sum::<f64>().sqrt();
                let q = c.len();
                st.tensors.push(SiteTensor {
                    left: 1,
                    q,
                    right: 1,
                    data: c.iter().map(|x| x / norm).collect(),
                });
                st.scale *= norm;
                i += 1;
            }
        }
        Ok(st)
    }

    pub fn with_truncation(mut self, truncation: Truncation) -> Self {
        self.truncation = truncation;
        self
    }

    pub fn truncation(&self) -> Truncation {
        self.truncation
    }

    pub fn layout(&self) -> &SiteLayout {
        &self.layout
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn site(&self, i: usize) -> &SiteTensor {
        &self.tensors[i]
    }

    /// Schmidt weights of bond `i` (between sites `i` and `i+1`).
    pub fn lambda(&self, i: usize) -> &[f64] {
        &self.lambdas[i]
    }

    pub fn bond_dims(&self) -> Vec<usize> {
        self.lambdas.iter().map(Vec::len).collect()
    }

    pub fn max_bond_dim(&self) -> usize {
        self.lambdas.iter().map(Vec::len).max().unwrap_or(1)
    }

    fn basis(&self, site: usize) -> &OperatorBasis {
        if self.dims[site] == 2 {
            &self.basis2
        } else {
            &self.basis4
        }
    }

    fn trace_vector(&self, site: usize) -> Vec<f64> {
        self.basis(site).trace_vector()
    }

    /// Applies a two-site map on bond `(bond, bond+1)` given as a real
    /// `q²×q²` matrix in the product operator basis, index `m·q_right + n`.
    /// Returns the relative squared weight discarded by truncation.
    pub fn apply_two_site_superoperator(&mut self, bond: usize, gate: &DMatrix<f64>) -> Result<f64> {
        if bond + 1 >= self.tensors.len() {
            return Err(Error::Usage(format!("bond {bond} out of range")));
        }
        let (bi, bj) = (&self.tensors[bond], &self.tensors[bond + 1]);
        let (l, q1, q2, r) = (bi.left, bi.q, bj.q, bj.right);
        let qq = q1 * q2;
        if gate.nrows() != qq || gate.ncols() != qq {
            return Err(Error::Usage(format!(
                "gate on bond {bond} is {}x{}, expected {qq}x{qq}",
                gate.nrows(),
                gate.ncols()
            )));
        }
        let theta = bi.as_left_grouped() * bj.as_right_grouped();
        // θ as [(s t), (a c)] for a single gate product
        let x = Mat::from_fn(qq, l * r, |st, ac| {
            let (s, t, a, c) = (st / q2, st % q2, ac / r, ac % r);
            theta[(a * q1 + s, t * r + c)]
        });
        let g = MatRef::from_column_major_slice(gate.as_slice(), qq, qq);
        let y = g * &x;
        let theta2 = Mat::from_fn(l * q1, q2 * r, |as_, tc| {
            let (a, s, t, c) = (as_ / q1, as_ % q1, tc / r, tc % r);
            y[(s * q2 + t, a * r + c)]
        });
        let left_weights: Vec<f64> = if bond == 0 {
            vec![1.0]
        } else {
            self.lambdas[bond - 1].clone()
        };
        let m = Mat::from_fn(l * q1, q2 * r, |as_, tc| left_weights[as_ / q1] * theta2[(as_, tc)]);
        let (s, v, total) = right_svd(m.as_ref(), self.truncation.chi_max, || format!("bond {bond}"))?;
        let (k, discarded) = self.truncation.rank_leading(&s, total);
        let norm = s[..k].iter().map(|x| x * x).sum::<f64>().sqrt();
        if !(norm > 0.0 && norm.is_finite()) {
            return Err(Error::Numerical(format!("state vanished at bond {bond}")));
        }
        let v = v.subcols(0, k);
        let new_left = (&theta2 * v) * faer::Scale(1.0 / norm);
        let vt = v.transpose().to_owned();
        self.tensors[bond] = SiteTensor::from_mat(l, q1, k, new_left.as_ref());
        self.tensors[bond + 1] = SiteTensor::from_mat(k, q2, r, vt.as_ref());
        self.lambdas[bond] = s[..k].iter().map(|x| x / norm).collect();
        self.scale *= norm;
        Ok(discarded)
    }

    /// Largest violation of the right-canonical and Schmidt-weight conditions
    /// over all sites.
    pub fn gauge_error(&self) -> f64 {
        let mut worst = 0.0_f64;
        for (i, t) in self.tensors.iter().enumerate() {
            let b = t.as_right_grouped();
            let right = b * b.transpose();
            for a in 0..t.left {
                for c in 0..t.left {
                    let expect = if a == c { 1.0 } else { 0.0 };
                    worst = worst.max((right[(a, c)] - expect).abs());
                }
            }
            let lw: Vec<f64> = if i == 0 { vec![1.0] } else { self.lambdas[i - 1].clone() };
            let weighted = Mat::from_fn(t.left * t.q, t.right, |as_, c| {
                lw[as_ / t.q] * t.data[as_ * t.right + c]
            });
            let left = weighted.transpose() * &weighted;
            let target: Vec<f64> = if i + 1 == self.tensors.len() {
                vec![1.0]
            } else {
                self.lambdas[i].iter().map(|x| x * x).collect()
            };
            for a in 0..t.right {
                for c in 0..t.right {
                    let expect = if a == c { target[a] } else { 0.0 };
                    worst = worst.max((left[(a, c)] - expect).abs());
                }
            }
        }
        worst
    }

    /// Restores the canonical form with a QR sweep to the right followed by
    /// an SVD sweep to the left, truncating as configured. Returns the total
    /// relative discarded weight.
    pub fn canonicalize(&mut self) -> Result<f64> {
        let n = self.tensors.len();
        // left-orthonormalize sites 0..n-1, pushing R to the right
        for i in 0..n - 1 {
            let t = &self.tensors[i];
            let (l, q) = (t.left, t.q);
            let qr = t.as_left_grouped().qr();
            let qm = qr.compute_thin_Q();
            let rm = qr.thin_R().to_owned();
            let k = qm.ncols();
            self.tensors[i] = SiteTensor::from_mat(l, q, k, qm.as_ref());
            let next = &self.tensors[i + 1];
            let merged = &rm * next.as_right_grouped();
            let (nq, nr) = (next.q, next.right);
            self.tensors[i + 1] = SiteTensor::from_mat(k, nq, nr, merged.as_ref());
        }
        let last = &mut self.tensors[n - 1];
        let norm = last.data.iter().map(|x| x * x).sum::<f64>().sqrt();
        if !(norm > 0.0 && norm.is_finite()) {
            return Err(Error::Numerical("state vanished during canonicalization".into()));
        }
        last.data.iter_mut().for_each(|x| *x /= norm);
        self.scale *= norm;
        // right sweep with SVD
        let mut discarded = 0.0;
        for i in (1..n).rev() {
            let t = &self.tensors[i];
            let (q, r) = (t.q, t.right);
            let f = svd(t.as_right_grouped(), || format!("canonicalization of site {i}"))?;
            let s = sorted_singular_values(&f);
            let (k, d) = self.truncation.rank(&s);
            discarded += d;
            let norm = s[..k].iter().map(|x| x * x).sum::<f64>().sqrt();
            let vt = f.V().subcols(0, k).transpose().to_owned();
            self.tensors[i] = SiteTensor::from_mat(k, q, r, vt.as_ref());
            let us = Mat::from_fn(f.U().nrows(), k, |a, c| f.U()[(a, c)] * s[c] / norm);
            let prev = &self.tensors[i - 1];
            let (pl, pq) = (prev.left, prev.q);
            let merged = prev.as_left_grouped() * &us;
            self.tensors[i - 1] = SiteTensor::from_mat(pl, pq, k, merged.as_ref());
            self.lambdas[i - 1] = s[..k].iter().map(|x| x / norm).collect();
            self.scale *= norm;
        }
        Ok(discarded)
    }

    /// Trace of the encoded operator.
    pub fn global_trace(&self) -> f64 {
        let mut env = Mat::<f64>::from_fn(1, 1, |_, _| 1.0);
        for (i, t) in self.tensors.iter().enumerate() {
            env = &env * t.contract_physical(&self.trace_vector(i));
        }
        self.scale * env[(0, 0)]
    }

    /// Coefficient matrix `C[s_a, s_b]` of sites `a < b` with every other site
    /// traced out.
    fn pair_coefficients(&self, a: usize, b: usize) -> Mat<f64> {
        let n = self.tensors.len();
        let mut left = Mat::<f64>::from_fn(1, 1, |_, _| 1.0);
        for i in 0..a {
            left = &left * self.tensors[i].contract_physical(&self.trace_vector(i));
        }
        let mut right = Mat::<f64>::from_fn(1, 1, |_, _| 1.0);
        for i in (b + 1..n).rev() {
            right = self.tensors[i].contract_physical(&self.trace_vector(i)) * &right;
        }
        let mut middle = Mat::<f64>::identity(self.tensors[a].right, self.tensors[a].right);
        for i in a + 1..b {
            middle = &middle * self.tensors[i].contract_physical(&self.trace_vector(i));
        }
        let ta = &self.tensors[a];
        let tb = &self.tensors[b];
        // per s_a: row vector (left · B_a[:, s_a, :] · middle)
        let rows: Vec<Mat<f64>> = (0..ta.q)
            .map(|s| {
                let mut e = vec![0.0; ta.q];
                e[s] = 1.0;
                &left * ta.contract_physical(&e) * &middle
            })
            .collect();
        let cols: Vec<Mat<f64>> = (0..tb.q)
            .map(|s| {
                let mut e = vec![0.0; tb.q];
                e[s] = 1.0;
                tb.contract_physical(&e) * &right
            })
            .collect();
        Mat::from_fn(ta.q, tb.q, |i, j| {
            self.scale * (&rows[i] * &cols[j])[(0, 0)]
        })
    }

    /// Reduced density matrix of two distinct sites, over their full local
    /// spaces, in the order `first ⊗ second`.
    pub fn reduce_sites(&self, first: usize, second: usize) -> Result<DMatrix<C64>> {
        let n = self.tensors.len();
        if first == second || first >= n || second >= n {
            return Err(Error::Usage(format!("invalid site pair ({first}, {second})")));
        }
        let (a, b) = (first.min(second), first.max(second));
        let c = self.pair_coefficients(a, b);
        let (ba, bb) = (self.basis(a), self.basis(b));
        let (da, db) = (self.dims[a], self.dims[b]);
        let mut rho = DMatrix::from_element(da * db, da * db, C64::new(0.0, 0.0));
        for i in 0..ba.len() {
            for j in 0..bb.len() {
                let w = c[(i, j)];
                if w != 0.0 {
                    rho += ba.element(i).kronecker(bb.element(j)) * C64::new(w, 0.0);
                }
            }
        }
        if first > second {
            rho = swap_factors(&rho, da, db);
        }
        Ok(rho)
    }

    /// Reduced density matrix of two spins on distinct sites, basis index
    /// `2·s_first + s_second`, other spins of those sites traced out.
    pub fn reduce_pair(&self, first: SpinId, second: SpinId) -> Result<Matrix4<C64>> {
        let locate = |s: SpinId| {
            self.layout
                .locate(s)
                .ok_or_else(|| Error::Usage(format!("spin {} not in layout", s.label())))
        };
        let ((sa, pa), (sb, pb)) = (locate(first)?, locate(second)?);
        if sa == sb {
            return Err(Error::Usage("reduce_pair needs spins on different sites".into()));
        }
        let rho = self.reduce_sites(sa, sb)?;
        let keep = [(self.dims[sa], pa), (self.dims[sb], pb)];
        Ok(keep_one_spin_each(&rho, keep))
    }

    /// Full operator on all sites, for small-system checks.
    pub fn to_dense_matrix(&self) -> DMatrix<C64> {
        let total: usize = self.dims.iter().product();
        let mut out = DMatrix::from_element(total, total, C64::new(0.0, 0.0));
        // enumerate operator strings through a left-to-right contraction
        let mut partial: Vec<(DMatrix<C64>, Mat<f64>)> =
            vec![(DMatrix::from_element(1, 1, C64::new(self.scale, 0.0)), Mat::from_fn(1, 1, |_, _| 1.0))];
        for (i, t) in self.tensors.iter().enumerate() {
            let basis = self.basis(i);
            let mut next = Vec::with_capacity(partial.len() * t.q);
            for (op, env) in &partial {
                for s in 0..t.q {
                    let mut e = vec![0.0; t.q];
                    e[s] = 1.0;
                    let env2 = env * t.contract_physical(&e);
                    if env2.norm_l2() == 0.0 {
                        continue;
                    }
                    next.push((op.kronecker(basis.element(s)), env2));
                }
            }
            partial = next;
        }
        for (op, env) in partial {
            out += op * C64::new(env[(0, 0)], 0.0);
        }
        out
    }
}

/// Reorders `A⊗B` into `B⊗A`.
fn swap_factors(rho: &DMatrix<C64>, da: usize, db: usize) -> DMatrix<C64> {
    DMatrix::from_fn(da * db, da * db, |r, c| {
        let (rb, ra) = (r / da, r % da);
        let (cb, ca) = (c / da, c % da);
        rho[(ra * db + rb, ca * db + cb)]
    })
}

/// Partial trace keeping spin `pos` of each factor; factors are one spin
/// (`d = 2`) or two spins (`d = 4`, position 0 most significant).
fn keep_one_spin_each(rho: &DMatrix<C64>, factors: [(usize, usize); 2]) -> Matrix4<C64> {
    let [(da, pa), (db, pb)] = factors;
    let split = |x: usize, d: usize, p: usize| -> (usize, usize) {
        if d == 2 {
            (x, 0)
        } else if p == 0 {
            (x >> 1, x & 1)
        } else {
            (x & 1, x >> 1)
        }
    };
    let mut out = Matrix4::zeros();
    for r in 0..da * db {
        let (ra, rb) = (r / db, r % db);
        let (ka, ta) = split(ra, da, pa);
        let (kb, tb) = split(rb, db, pb);
        for c in 0..da * db {
            let (ca, cb) = (c / db, c % db);
            let (la, ua) = split(ca, da, pa);
            let (lb, ub) = split(cb, db, pb);
            if ta == ua && tb == ub {
                out[(2 * ka + kb, 2 * la + lb)] += rho[(r, c)];
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{initial_state_spec, Geometry, GeometryKind};
    use proptest::prelude::*;
    use rand::Rng;

    fn layout(kind: GeometryKind, n: usize) -> SiteLayout {
        SiteLayout::new(&Geometry::new(kind, n).unwrap())
    }

    fn state(kind: GeometryKind, n: usize) -> TensorState {
        TensorState::encode_product_state(&layout(kind, n), &initial_state_spec()).unwrap()
    }

    /// `rows × cols` matrix with singular values `0.7^i` and pseudo-random
    /// singular vectors.
    fn decaying(rows: usize, cols: usize) -> Mat<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut gauss = |r: usize, c: usize| {
            let v: Vec<f64> = (0..r * c).map(|_| rng.sample(StandardNormal)).collect();
            orthonormal_columns(MatRef::from_column_major_slice(&v, r, c))
        };
        let k = rows.min(cols);
        let u = gauss(rows, k);
        let v = gauss(cols, k);
        let us = Mat::from_fn(rows, k, |i, j| u[(i, j)] * 0.7f64.powi(j as i32));
        &us * v.transpose()
    }

    #[test]
    fn sketched_svd_matches_full_svd() {
        let m = decaying(200, 180);
        let (s_full, v_full, total_full) = right_svd(m.as_ref(), 200, String::new).unwrap();
        let (s, v, total) = right_svd(m.as_ref(), 20, String::new).unwrap();
        assert_eq!(s_full.len(), 180);
        assert_eq!(s.len(), 36);
        assert!((total - total_full).abs() < 1e-12 * total_full);
        for i in 0..20 {
            assert!((s[i] - s_full[i]).abs() < 1e-10 * s_full[0], "singular value {i}");
            let overlap: f64 = (0..180).map(|r| v[(r, i)] * v_full[(r, i)]).sum();
            assert!((overlap.abs() - 1.0).abs() < 1e-8, "vector {i}");
        }
        let t = Truncation { chi_max: 20, cutoff: 0.0 };
        let (k, w) = t.rank_leading(&s, total);
        let (k_full, w_full) = t.rank(&s_full);
        assert_eq!(k, k_full);
        assert!((w - w_full).abs() < 1e-12);
    }

    fn c(x: f64) -> C64 {
        C64::new(x, 0.0)
    }

    #[test]
    fn truncation_rank_rules() {
        let t = Truncation { chi_max: 3, cutoff: 1e-3 };
        assert_eq!(t.rank(&[1.0, 0.5, 1e-4]).0, 2);
        assert_eq!(t.rank(&[1.0, 0.5, 0.4, 0.3]).0, 3);
        let (k, w) = t.rank(&[1.0, 0.5, 0.4, 0.3]);
        assert_eq!(k, 3);
        assert!((w - 0.09 / 1.5).abs() < 1e-15);
        let loose = Truncation { chi_max: 10, cutoff: 0.45 };
        // 0.5 kept, 0.5 - 1e-13 tied and kept, 0.4 dropped
        assert_eq!(loose.rank(&[1.0, 0.5, 0.5 - 1e-13, 0.4]).0, 3);
        assert_eq!(t.rank(&[0.0, 0.0]).0, 1);
    }

    #[test]
    fn ladder_encoding_is_a_product() {
        let st = state(GeometryKind::Ladder, 3);
        assert!(st.bond_dims().iter().all(|&d| d == 1));
        assert!((st.global_trace() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn chain_encoding_has_rank_four_singlet_bond() {
        let st = state(GeometryKind::Chain, 2);
        assert_eq!(st.bond_dims(), vec![4, 1, 1, 1]);
        for &l in st.lambda(0) {
            assert!((l - 0.5).abs() < 1e-14);
        }
        assert!((st.global_trace() - 1.0).abs() < 1e-14);
        assert!(st.gauge_error() < 1e-14);
    }

    #[test]
    fn initial_reduced_state() {
        for kind in [GeometryKind::Chain, GeometryKind::Ladder] {
            let st = state(kind, 2);
            let r = st.reduce_pair(SpinId::Ancilla, SpinId::NvRight).unwrap();
            let mut expect = Matrix4::zeros();
            expect[(1, 1)] = c(0.5);
            expect[(3, 3)] = c(0.5);
            assert!((r - expect).norm() < 1e-14, "{kind:?}: {r}");
        }
    }

    #[test]
    fn ancilla_left_nv_is_the_singlet() {
        let st = state(GeometryKind::Chain, 1);
        let r = st.reduce_pair(SpinId::Ancilla, SpinId::NvLeft).unwrap();
        let s = 0.5;
        let mut expect = Matrix4::zeros();
        expect[(1, 1)] = c(s);
        expect[(2, 2)] = c(s);
        expect[(1, 2)] = c(-s);
        expect[(2, 1)] = c(-s);
        assert!((r - expect).norm() < 1e-14);
        let swapped = st.reduce_pair(SpinId::NvLeft, SpinId::Ancilla).unwrap();
        assert!((swapped - expect).norm() < 1e-14);
    }

    #[test]
    fn identity_gate_changes_nothing() {
        let mut st = state(GeometryKind::Chain, 2);
        let before = st.to_dense_matrix();
        for bond in 0..st.len() - 1 {
            let w = st.apply_two_site_superoperator(bond, &DMatrix::identity(16, 16)).unwrap();
            assert!(w < 1e-30, "{w}");
        }
        assert!((st.to_dense_matrix() - before).norm() < 1e-13);
    }

    fn swap_gate(q: usize) -> DMatrix<f64> {
        DMatrix::from_fn(q * q, q * q, |r, c| {
            let (m, n) = (c / q, c % q);
            if r == n * q + m {
                1.0
            } else {
                0.0
            }
        })
    }

    #[test]
    fn swap_twice_is_identity() {
        let mut st = state(GeometryKind::Chain, 2);
        let before = st.to_dense_matrix();
        st.apply_two_site_superoperator(0, &swap_gate(4)).unwrap();
        st.apply_two_site_superoperator(1, &swap_gate(4)).unwrap();
        let moved = st.to_dense_matrix();
        assert!((&moved - &before).norm() > 0.1);
        st.apply_two_site_superoperator(1, &swap_gate(4)).unwrap();
        st.apply_two_site_superoperator(0, &swap_gate(4)).unwrap();
        assert!((st.to_dense_matrix() - before).norm() < 1e-12);
    }

    #[test]
    fn bad_gate_shape() {
        let mut st = state(GeometryKind::Chain, 1);
        assert!(matches!(
            st.apply_two_site_superoperator(0, &DMatrix::identity(4, 4)),
            Err(Error::Usage(_))
        ));
        assert!(st.apply_two_site_superoperator(9, &DMatrix::identity(16, 16)).is_err());
    }

    proptest! {
        #[test]
        fn entangling_gate_gives_exact_schmidt_rank(
            vals in proptest::collection::vec(-1.0f64..1.0, 256),
        ) {
            // product state on a 4-site chain, random gate on bond 2
            let mut st = state(GeometryKind::Chain, 1);
            let gate = DMatrix::from_row_slice(16, 16, &vals);
            st.apply_two_site_superoperator(2, &gate).unwrap();
            // exact rank of the gate applied to the local coefficient vector
            let local = {
                let before = state(GeometryKind::Chain, 1);
                let v: Vec<f64> = (0..4)
                    .flat_map(|s| (0..4).map(move |t| (s, t)))
                    .map(|(s, t)| before.site(2).data[s] * before.site(3).data[t])
                    .collect();
                &gate * DVector::from_vec(v)
            };
            let m = DMatrix::from_fn(4, 4, |s, t| local[s * 4 + t]);
            let sv = m.singular_values();
            let rank = sv.iter().filter(|&&x| x > DEFAULT_CUTOFF * sv.max()).count();
            prop_assert_eq!(st.bond_dims()[2], rank);
            let dense_norm = local.norm();
            prop_assert!((st.scale / dense_norm - 1.0).abs() < 1e-10);
            let lam = st.lambda(2);
            prop_assert!(lam.windows(2).all(|w| w[0] >= w[1]) && lam.iter().all(|&x| x >= 0.0));
        }
    }

    #[test]
    fn canonicalize_preserves_state() {
        let mut st = state(GeometryKind::Chain, 2);
        let mut seed = 7u64;
        let mut next = move || {
            seed ^= seed << 13;
            seed ^= seed >> 7;
            seed ^= seed << 17;
            (seed as f64 / u64::MAX as f64) - 0.5
        };
        for bond in [0, 1, 2, 3, 1, 2] {
            let g = DMatrix::from_fn(16, 16, |_, _| next());
            st.apply_two_site_superoperator(bond, &g).unwrap();
        }
        let before = st.to_dense_matrix();
        assert!(st.gauge_error() > GAUGE_TOLERANCE);
        st.canonicalize().unwrap();
        assert!(st.gauge_error() < 1e-12, "{}", st.gauge_error());
        let after = st.to_dense_matrix();
        assert!((&after - &before).norm() < 1e-10 * before.norm());
    }
}
