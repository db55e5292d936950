//! Small complex linear-algebra helpers shared across modules.
//!
//! Channel vectors are stored as column `DVector`s but are used as the row
//! vectors of the system model: `h·v = Σ h[i]·v[i]` with no conjugation, and
//! `h·V·hᴴ = Σ h[i]·V[i,j]·conj(h[j])`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type C64 = Complex64;
pub type CVector = DVector<C64>;
pub type CMatrix = DMatrix<C64>;

pub const ZERO: C64 = C64::new(0.0, 0.0);
pub const ONE: C64 = C64::new(1.0, 0.0);

/// `h·v` for a row channel `h` and a column beamformer `v`.
pub fn row_dot(h: &CVector, v: &CVector) -> C64 {
    h.iter().zip(v.iter()).map(|(a, b)| a * b).sum()
}

/// `Re(h·V·hᴴ)`, i.e. `Tr(hᴴh·V)`.
pub fn quad_form(h: &CVector, v: &CMatrix) -> f64 {
    let n = h.len();
    let mut acc = ZERO;
    for i in 0..n {
        if h[i] == ZERO {
            continue;
        }
        let mut row = ZERO;
        for j in 0..n {
            row += v[(i, j)] * h[j].conj();
        }
        acc += h[i] * row;
    }
    acc.re
}

/// The rank-one Gram matrix `hᴴh` of a row channel.
pub fn gram(h: &CVector) -> CMatrix {
    let n = h.len();
    CMatrix::from_fn(n, n, |i, j| h[i].conj() * h[j])
}

/// `v·vᴴ` for a column beamformer.
pub fn outer(v: &CVector) -> CMatrix {
    let n = v.len();
    CMatrix::from_fn(n, n, |i, j| v[i] * v[j].conj())
}

pub fn trace_re(m: &CMatrix) -> f64 {
    (0..m.nrows().min(m.ncols())).map(|i| m[(i, i)].re).sum()
}

/// Largest entry-wise deviation from Hermitian symmetry.
pub fn hermitian_asymmetry(m: &CMatrix) -> f64 {
    let mut worst: f64 = 0.0;
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            worst = worst.max((m[(i, j)] - m[(j, i)].conj()).norm());
        }
    }
    worst
}

pub fn hermitian_part(m: &CMatrix) -> CMatrix {
    (m + m.adjoint()).scale(0.5)
}

/// Eigen-decomposition of a Hermitian matrix, eigenvalues sorted in
/// descending order with matching eigenvector columns.
pub struct HermEigen {
    pub values: Vec<f64>,
    pub vectors: CMatrix,
}

pub fn herm_eigen(m: &CMatrix) -> HermEigen {
    let n = m.nrows();
    if n == 0 {
        return HermEigen {
            values: Vec::new(),
            vectors: CMatrix::zeros(0, 0),
        };
    }
    let eig = SymmetricEigen::new(hermitian_part(m));
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = CMatrix::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);
    HermEigen { values, vectors }
}

pub fn sym_eigen_real(m: &DMatrix<f64>) -> Vec<f64> {
    let sym = (m + m.transpose()).scale(0.5);
    let mut v: Vec<f64> = SymmetricEigen::new(sym).eigenvalues.iter().copied().collect();
    v.sort_by(|a, b| b.total_cmp(a));
    v
}

/// Nearest PSD matrix in Frobenius norm: the Hermitian part with negative
/// eigenvalues set to zero.
pub fn psd_projection(m: &CMatrix) -> CMatrix {
    let e = herm_eigen(m);
    if e.values.last().is_none_or(|&v| v >= 0.0) {
        return hermitian_part(m);
    }
    let n = m.nrows();
    let mut out = CMatrix::zeros(n, n);
    for (j, &v) in e.values.iter().enumerate().filter(|(_, &v)| v > 0.0) {
        let u = e.vectors.column(j);
        out += (u * u.adjoint()).scale(v);
    }
    out
}

pub fn min_eigenvalue(m: &CMatrix) -> f64 {
    herm_eigen(m).values.last().copied().unwrap_or(0.0)
}

pub fn max_eigenvalue(m: &CMatrix) -> f64 {
    herm_eigen(m).values.first().copied().unwrap_or(0.0)
}

/// Checks Hermitian symmetry and positive semidefiniteness with absolute
/// tolerances scaled by the matrix magnitude.
pub fn check_psd(m: &CMatrix, herm_tol: f64, eig_tol: f64) -> Result<()> {
    let scale = m.iter().map(|z| z.norm()).fold(0.0, f64::max).max(1.0);
    let asym = hermitian_asymmetry(m);
    if asym > herm_tol * scale {
        return Err(Error::NotHermitian(asym));
    }
    let min = min_eigenvalue(m);
    if min < -eig_tol * scale {
        return Err(Error::NotPsd(min));
    }
    Ok(())
}

/// Principal rank-one factor `√λ₁·u₁` of a PSD matrix.
pub fn principal_vector(m: &CMatrix) -> CVector {
    let eig = herm_eigen(m);
    let lam = eig.values.first().copied().unwrap_or(0.0).max(0.0);
    eig.vectors.column(0).into_owned().scale(lam.sqrt())
}

pub fn frobenius(m: &CMatrix) -> f64 {
    m.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

pub fn cvec_norm_sqr(v: &CVector) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum()
}

/// JSON-friendly split representation of a complex vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplexArray {
    pub re: Vec<f64>,
    pub im: Vec<f64>,
}

impl From<&CVector> for ComplexArray {
    fn from(v: &CVector) -> Self {
        ComplexArray {
            re: v.iter().map(|z| z.re).collect(),
            im: v.iter().map(|z| z.im).collect(),
        }
    }
}

impl ComplexArray {
    pub fn to_vector(&self) -> Result<CVector> {
        if self.re.len() != self.im.len() {
            return Err(Error::Dimension(format!(
                "re/im length {} vs {}",
                self.re.len(),
                self.im.len()
            )));
        }
        Ok(CVector::from_iterator(
            self.re.len(),
            self.re.iter().zip(&self.im).map(|(&r, &i)| C64::new(r, i)),
        ))
    }
}

/// Row-major split representation of a complex matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplexMatrixArray {
    pub rows: usize,
    pub cols: usize,
    pub re: Vec<f64>,
    pub im: Vec<f64>,
}

impl From<&CMatrix> for ComplexMatrixArray {
    fn from(m: &CMatrix) -> Self {
        let mut re = Vec::with_capacity(m.len());
        let mut im = Vec::with_capacity(m.len());
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                re.push(m[(i, j)].re);
                im.push(m[(i, j)].im);
            }
        }
        ComplexMatrixArray {
            rows: m.nrows(),
            cols: m.ncols(),
            re,
            im,
        }
    }
}

impl ComplexMatrixArray {
    pub fn to_matrix(&self) -> Result<CMatrix> {
        let n = self.rows * self.cols;
        if self.re.len() != n || self.im.len() != n {
            return Err(Error::Dimension(format!(
                "matrix {}x{} with {} / {} entries",
                self.rows,
                self.cols,
                self.re.len(),
                self.im.len()
            )));
        }
        Ok(CMatrix::from_fn(self.rows, self.cols, |i, j| {
            let k = i * self.cols + j;
            C64::new(self.re[k], self.im[k])
        }))
    }
}

pub(crate) mod serde_cvecs {
    use super::{CVector, ComplexArray};
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &[CVector], s: S) -> Result<S::Ok, S::Error> {
        let arrays: Vec<ComplexArray> = v.iter().map(ComplexArray::from).collect();
        arrays.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<CVector>, D::Error> {
        let arrays = Vec::<ComplexArray>::deserialize(d)?;
        arrays
            .iter()
            .map(|a| a.to_vector().map_err(serde::de::Error::custom))
            .collect()
    }
}

pub(crate) mod serde_cmat {
    use super::{CMatrix, ComplexMatrixArray};
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &CMatrix, s: S) -> Result<S::Ok, S::Error> {
        ComplexMatrixArray::from(m).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<CMatrix, D::Error> {
        ComplexMatrixArray::deserialize(d)?
            .to_matrix()
            .map_err(serde::de::Error::custom)
    }
}

pub(crate) mod serde_cmats {
    use super::{CMatrix, ComplexMatrixArray};
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &[CMatrix], s: S) -> Result<S::Ok, S::Error> {
        let arrays: Vec<ComplexMatrixArray> = v.iter().map(ComplexMatrixArray::from).collect();
        arrays.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<CMatrix>, D::Error> {
        Vec::<ComplexMatrixArray>::deserialize(d)?
            .iter()
            .map(|a| a.to_matrix().map_err(serde::de::Error::custom))
            .collect()
    }
}

pub(crate) mod serde_opt_cvec {
    use super::{CVector, ComplexArray};
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &Option<CVector>, s: S) -> Result<S::Ok, S::Error> {
        v.as_ref().map(ComplexArray::from).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<CVector>, D::Error> {
        Option::<ComplexArray>::deserialize(d)?
            .map(|a| a.to_vector().map_err(serde::de::Error::custom))
            .transpose()
    }
}

pub(crate) mod serde_opt_cvecs {
    use super::{CVector, ComplexArray};
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &Option<Vec<CVector>>, s: S) -> Result<S::Ok, S::Error> {
        v.as_ref()
            .map(|vs| vs.iter().map(ComplexArray::from).collect::<Vec<_>>())
            .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(
        d: D,
    ) -> Result<Option<Vec<CVector>>, D::Error> {
        Option::<Vec<ComplexArray>>::deserialize(d)?
            .map(|vs| {
                vs.iter()
                    .map(|a| a.to_vector().map_err(serde::de::Error::custom))
                    .collect()
            })
            .transpose()
    }
}
