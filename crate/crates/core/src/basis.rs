//! Hermitian orthonormal operator bases (generalized Gell-Mann matrices).
//!
//! Element 0 is `I/√d`; then the symmetric family `(|j⟩⟨k| + |k⟩⟨j|)/√2`,
//! the antisymmetric family `(−i|j⟩⟨k| + i|k⟩⟨j|)/√2` (both over `j < k` in
//! lexicographic order), and finally the diagonal family
//! `(Σ_{j<l} |j⟩⟨j| − l|l⟩⟨l|)/√(l(l+1))` for `l = 1 … d−1`. All elements
//! satisfy `Tr(B_m B_n) = δ_mn`, so any Hermitian operator has real expansion
//! coefficients `Tr(B_n X)`. For `d = 2` this is `{I, σˣ, σʸ, σᶻ}/√2`.

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;

use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct OperatorBasis {
    d: usize,
    elements: Vec<DMatrix<C64>>,
}

/// Basis for local dimension 2 (one spin) or 4 (two spins).
pub fn operator_basis(d: usize) -> Result<OperatorBasis> {
    if d != 2 && d != 4 {
        return Err(Error::Usage(format!(
            "operator basis is defined for d = 2 or 4, got {d}"
        )));
    }
    Ok(OperatorBasis::gell_mann(d))
}

impl OperatorBasis {
    fn gell_mann(d: usize) -> Self {
        let zero = C64::new(0.0, 0.0);
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let mut elements = Vec::with_capacity(d * d);
        elements.push(DMatrix::<C64>::identity(d, d) / C64::new((d as f64).sqrt(), 0.0));
        for j in 0..d {
            for k in j + 1..d {
                let mut m = DMatrix::from_element(d, d, zero);
                m[(j, k)] = C64::new(s, 0.0);
                m[(k, j)] = C64::new(s, 0.0);
                elements.push(m);
            }
        }
        for j in 0..d {
            for k in j + 1..d {
                let mut m = DMatrix::from_element(d, d, zero);
                m[(j, k)] = C64::new(0.0, -s);
                m[(k, j)] = C64::new(0.0, s);
                elements.push(m);
            }
        }
        for l in 1..d {
            let norm = 1.0 / ((l * (l + 1)) as f64).sqrt();
            let mut m = DMatrix::from_element(d, d, zero);
            for j in 0..l {
                m[(j, j)] = C64::new(norm, 0.0);
            }
            m[(l, l)] = C64::new(-(l as f64) * norm, 0.0);
            elements.push(m);
        }
        OperatorBasis { d, elements }
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    /// Number of elements, `d²`.
    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    pub fn element(&self, n: usize) -> &DMatrix<C64> {
        &self.elements[n]
    }

    pub fn elements(&self) -> &[DMatrix<C64>] {
        &self.elements
    }

    /// Real expansion coefficients `Tr(B_n X)` of a Hermitian operator.
    pub fn coefficients(&self, x: &DMatrix<C64>) -> Vec<f64> {
        self.elements.iter().map(|b| trace_product(b, x).re).collect()
    }

    pub fn synthesize(&self, coeffs: &[f64]) -> DMatrix<C64> {
        let mut out = DMatrix::from_element(self.d, self.d, C64::new(0.0, 0.0));
        for (b, &c) in self.elements.iter().zip(coeffs) {
            out += b * C64::new(c, 0.0);
        }
        out
    }

    /// `Tr(B_n)` for every element: `√d` at index 0, zero elsewhere.
    pub fn trace_vector(&self) -> Vec<f64> {
        let mut v = vec![0.0; self.len()];
        v[0] = (self.d as f64).sqrt();
        v
    }
}

/// `Tr(A B)` without forming the product.
pub fn trace_product(a: &DMatrix<C64>, b: &DMatrix<C64>) -> C64 {
    let mut acc = C64::new(0.0, 0.0);
    for i in 0..a.nrows() {
        for j in 0..a.ncols() {
            acc += a[(i, j)] * b[(j, i)];
        }
    }
    acc
}

/// Real matrix of a Hermiticity-preserving linear map on `A⊗B` operators,
/// expressed in the product basis `B^a_m ⊗ B^b_n` with combined index
/// `m·|b| + n`.
pub fn superoperator_matrix<F>(a: &OperatorBasis, b: &OperatorBasis, map: F) -> DMatrix<f64>
where
    F: Fn(&DMatrix<C64>) -> DMatrix<C64>,
{
    let product: Vec<DMatrix<C64>> = a
        .elements
        .iter()
        .flat_map(|x| b.elements.iter().map(move |y| x.kronecker(y)))
        .collect();
    let q = product.len();
    let mut out = DMatrix::zeros(q, q);
    for (j, ej) in product.iter().enumerate() {
        let image = map(ej);
        for (i, ei) in product.iter().enumerate() {
            out[(i, j)] = trace_product(ei, &image).re;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn unsupported_dimension() {
        assert!(matches!(operator_basis(3), Err(Error::Usage(_))));
    }

    fn check_orthonormal(basis: &OperatorBasis) {
        for (m, bm) in basis.elements().iter().enumerate() {
            assert!((bm - bm.adjoint()).iter().all(|z| z.norm() < 1e-15));
            for (n, bn) in basis.elements().iter().enumerate() {
                let ip = trace_product(bm, bn);
                let expect = if m == n { 1.0 } else { 0.0 };
                assert!((ip - C64::new(expect, 0.0)).norm() < 1e-14, "({m},{n}) -> {ip}");
            }
        }
    }

    #[test]
    fn qubit_basis_is_pauli() {
        let b = operator_basis(2).unwrap();
        assert_eq!(b.len(), 4);
        check_orthonormal(&b);
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let c = |re: f64, im: f64| C64::new(re, im);
        let x = DMatrix::from_row_slice(2, 2, &[c(0., 0.), c(s, 0.), c(s, 0.), c(0., 0.)]);
        let y = DMatrix::from_row_slice(2, 2, &[c(0., 0.), c(0., -s), c(0., s), c(0., 0.)]);
        let z = DMatrix::from_row_slice(2, 2, &[c(s, 0.), c(0., 0.), c(0., 0.), c(-s, 0.)]);
        assert!((b.element(0) - DMatrix::identity(2, 2) * c(s, 0.)).norm() < 1e-15);
        assert!((b.element(1) - x).norm() < 1e-15);
        assert!((b.element(2) - y).norm() < 1e-15);
        assert!((b.element(3) - z).norm() < 1e-15);
    }

    #[test]
    fn two_spin_basis_is_orthonormal() {
        let b = operator_basis(4).unwrap();
        assert_eq!(b.len(), 16);
        check_orthonormal(&b);
        for (n, e) in b.elements().iter().enumerate().skip(1) {
            assert!(e.trace().norm() < 1e-15, "element {n} not traceless");
        }
        assert_eq!(b.trace_vector()[0], 2.0);
    }

    proptest! {
        #[test]
        fn hermitian_round_trip(vals in proptest::collection::vec(-1.0f64..1.0, 32)) {
            let d = 4;
            let mut m = DMatrix::from_fn(d, d, |i, j| C64::new(vals[i * d + j], vals[16 + i * d + j]));
            m = (&m + m.adjoint()) * C64::new(0.5, 0.0);
            let b = operator_basis(d).unwrap();
            let back = b.synthesize(&b.coefficients(&m));
            prop_assert!((back - m).iter().all(|z| z.norm() < 1e-12));
        }
    }

    #[test]
    fn identity_map_gives_identity_matrix() {
        let b = operator_basis(2).unwrap();
        let s = superoperator_matrix(&b, &b, |x| x.clone());
        assert!((s - DMatrix::<f64>::identity(16, 16)).norm() < 1e-14);
    }
}
