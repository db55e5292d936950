//! Conic problem assembly on top of an interior-point backend.
//!
//! Problems are written in terms of scalar variables and Hermitian matrix
//! variables. Each constraint is an affine expression required to lie in a
//! cone (zero, non-negative orthant, second-order, exponential, real PSD);
//! complex Hermitian LMIs are realified with
//! `E(H) = [[Re H, −Im H], [Im H, Re H]]` before they reach the backend.
//! Every constraint block carries a tag so the optimal multipliers can be
//! looked up by name after the solve.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::ops::{Add, AddAssign, Mul, Neg, Sub};

use clarabel::algebra::CscMatrix;
use clarabel::solver::{
    DefaultSettingsBuilder, DefaultSolver, IPSolver, SolverStatus, SupportedConeT,
};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{hermitian_asymmetry, sym_eigen_real, CMatrix, CVector, C64};

const SQRT2: f64 = std::f64::consts::SQRT_2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(pub usize);

/// Real affine expression `Σ cᵢ·xᵢ + constant`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Affine {
    pub terms: Vec<(usize, f64)>,
    pub constant: f64,
}

impl Affine {
    pub fn constant(c: f64) -> Self {
        Affine {
            terms: Vec::new(),
            constant: c,
        }
    }

    pub fn var(v: Var) -> Self {
        Affine {
            terms: vec![(v.0, 1.0)],
            constant: 0.0,
        }
    }

    pub fn term(v: Var, c: f64) -> Self {
        Affine {
            terms: vec![(v.0, c)],
            constant: 0.0,
        }
    }

    pub fn add_term(&mut self, v: usize, c: f64) {
        if c != 0.0 {
            self.terms.push((v, c));
        }
    }

    pub fn scale(mut self, s: f64) -> Self {
        for t in &mut self.terms {
            t.1 *= s;
        }
        self.constant *= s;
        self
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.constant + self.terms.iter().map(|&(i, c)| c * x[i]).sum::<f64>()
    }

    /// Merges repeated variables and drops zero coefficients.
    pub fn compact(mut self) -> Self {
        self.terms.sort_by_key(|t| t.0);
        let mut out: Vec<(usize, f64)> = Vec::with_capacity(self.terms.len());
        for (i, c) in self.terms {
            match out.last_mut() {
                Some(last) if last.0 == i => last.1 += c,
                _ => out.push((i, c)),
            }
        }
        out.retain(|t| t.1 != 0.0);
        self.terms = out;
        self
    }
}

impl From<f64> for Affine {
    fn from(c: f64) -> Self {
        Affine::constant(c)
    }
}

impl From<Var> for Affine {
    fn from(v: Var) -> Self {
        Affine::var(v)
    }
}

impl AddAssign<&Affine> for Affine {
    fn add_assign(&mut self, rhs: &Affine) {
        self.terms.extend_from_slice(&rhs.terms);
        self.constant += rhs.constant;
    }
}

impl Add for Affine {
    type Output = Affine;
    fn add(mut self, rhs: Affine) -> Affine {
        self += &rhs;
        self
    }
}

impl Sub for Affine {
    type Output = Affine;
    fn sub(self, rhs: Affine) -> Affine {
        self + rhs.scale(-1.0)
    }
}

impl Neg for Affine {
    type Output = Affine;
    fn neg(self) -> Affine {
        self.scale(-1.0)
    }
}

impl Mul<f64> for Affine {
    type Output = Affine;
    fn mul(self, s: f64) -> Affine {
        self.scale(s)
    }
}

/// Complex affine expression with real and imaginary parts.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CAffine {
    pub re: Affine,
    pub im: Affine,
}

impl CAffine {
    pub fn real(re: Affine) -> Self {
        CAffine {
            re,
            im: Affine::default(),
        }
    }

    pub fn constant(c: C64) -> Self {
        CAffine {
            re: Affine::constant(c.re),
            im: Affine::constant(c.im),
        }
    }

    pub fn mul_c(&self, c: C64) -> Self {
        CAffine {
            re: self.re.clone().scale(c.re) - self.im.clone().scale(c.im),
            im: self.im.clone().scale(c.re) + self.re.clone().scale(c.im),
        }
    }

    pub fn conj(&self) -> Self {
        CAffine {
            re: self.re.clone(),
            im: -self.im.clone(),
        }
    }

    pub fn add(&self, o: &CAffine) -> Self {
        CAffine {
            re: self.re.clone() + o.re.clone(),
            im: self.im.clone() + o.im.clone(),
        }
    }

    pub fn eval(&self, x: &[f64]) -> C64 {
        C64::new(self.re.eval(x), self.im.eval(x))
    }
}

/// Square complex matrix of affine expressions.
#[derive(Debug, Clone)]
pub struct CMatExpr {
    pub n: usize,
    pub data: Vec<CAffine>,
}

impl CMatExpr {
    pub fn zeros(n: usize) -> Self {
        CMatExpr {
            n,
            data: vec![CAffine::default(); n * n],
        }
    }

    pub fn get(&self, i: usize, j: usize) -> &CAffine {
        &self.data[i * self.n + j]
    }

    pub fn get_mut(&mut self, i: usize, j: usize) -> &mut CAffine {
        &mut self.data[i * self.n + j]
    }

    pub fn from_constant(m: &CMatrix) -> Self {
        let n = m.nrows();
        let mut out = Self::zeros(n);
        for i in 0..n {
            for j in 0..n {
                *out.get_mut(i, j) = CAffine::constant(m[(i, j)]);
            }
        }
        out
    }

    /// `s·I` for a real affine scalar `s`.
    pub fn scaled_identity(n: usize, s: &Affine) -> Self {
        let mut out = Self::zeros(n);
        for i in 0..n {
            *out.get_mut(i, i) = CAffine::real(s.clone());
        }
        out
    }

    pub fn add(&self, o: &CMatExpr) -> Self {
        assert_eq!(self.n, o.n);
        CMatExpr {
            n: self.n,
            data: self.data.iter().zip(&o.data).map(|(a, b)| a.add(b)).collect(),
        }
    }

    pub fn scale(&self, s: f64) -> Self {
        CMatExpr {
            n: self.n,
            data: self.data.iter().map(|a| a.mul_c(C64::new(s, 0.0))).collect(),
        }
    }

    /// `A·X·Aᴴ` for a constant `A` of shape `p × n`.
    pub fn congruence(a: &CMatrix, x: &CMatExpr) -> Self {
        let p = a.nrows();
        assert_eq!(a.ncols(), x.n);
        let mut out = Self::zeros(p);
        for r in 0..p {
            for c in r..p {
                let mut acc = CAffine::default();
                for i in 0..x.n {
                    if a[(r, i)] == C64::new(0.0, 0.0) {
                        continue;
                    }
                    for j in 0..x.n {
                        let w = a[(r, i)] * a[(c, j)].conj();
                        if w != C64::new(0.0, 0.0) {
                            acc = acc.add(&x.get(i, j).mul_c(w));
                        }
                    }
                }
                let acc = CAffine {
                    re: acc.re.compact(),
                    im: acc.im.compact(),
                };
                if r != c {
                    *out.get_mut(c, r) = acc.conj();
                }
                *out.get_mut(r, c) = acc;
            }
        }
        out
    }

    /// Row vector `h·X`.
    pub fn left_row(h: &CVector, x: &CMatExpr) -> Vec<CAffine> {
        (0..x.n)
            .map(|b| {
                let mut acc = CAffine::default();
                for a in 0..x.n {
                    if h[a] != C64::new(0.0, 0.0) {
                        acc = acc.add(&x.get(a, b).mul_c(h[a]));
                    }
                }
                CAffine {
                    re: acc.re.compact(),
                    im: acc.im.compact(),
                }
            })
            .collect()
    }

    /// `Re(h·X·hᴴ)`.
    pub fn quad(h: &CVector, x: &CMatExpr) -> Affine {
        let row = Self::left_row(h, x);
        let mut acc = CAffine::default();
        for (b, r) in row.iter().enumerate() {
            acc = acc.add(&r.mul_c(h[b].conj()));
        }
        acc.re.compact()
    }

    pub fn eval(&self, x: &[f64]) -> CMatrix {
        CMatrix::from_fn(self.n, self.n, |i, j| self.get(i, j).eval(x))
    }
}

/// Hermitian `n × n` matrix variable stored as `n²` reals: the diagonal,
/// then real and imaginary parts of the strict upper triangle.
#[derive(Debug, Clone)]
pub struct HermVar {
    pub n: usize,
    pub offset: usize,
}

impl HermVar {
    fn upper_index(&self, i: usize, j: usize) -> usize {
        debug_assert!(i < j);
        // row-major position in the strict upper triangle
        i * self.n - i * (i + 1) / 2 + (j - i - 1)
    }

    pub fn diag_var(&self, i: usize) -> usize {
        self.offset + i
    }

    fn re_var(&self, i: usize, j: usize) -> usize {
        self.offset + self.n + self.upper_index(i, j)
    }

    fn im_var(&self, i: usize, j: usize) -> usize {
        let m = self.n * (self.n - 1) / 2;
        self.offset + self.n + m + self.upper_index(i, j)
    }

    pub fn num_reals(&self) -> usize {
        self.n * self.n
    }

    pub fn entry(&self, i: usize, j: usize) -> CAffine {
        use std::cmp::Ordering::*;
        match i.cmp(&j) {
            Equal => CAffine::real(Affine::var(Var(self.diag_var(i)))),
            Less => CAffine {
                re: Affine::var(Var(self.re_var(i, j))),
                im: Affine::var(Var(self.im_var(i, j))),
            },
            Greater => CAffine {
                re: Affine::var(Var(self.re_var(j, i))),
                im: -Affine::var(Var(self.im_var(j, i))),
            },
        }
    }

    pub fn expr(&self) -> CMatExpr {
        let mut out = CMatExpr::zeros(self.n);
        for i in 0..self.n {
            for j in 0..self.n {
                *out.get_mut(i, j) = self.entry(i, j);
            }
        }
        out
    }

    pub fn trace(&self) -> Affine {
        let mut a = Affine::default();
        for i in 0..self.n {
            a.add_term(self.diag_var(i), 1.0);
        }
        a
    }

    /// `Re Tr(A·X)` for a constant Hermitian `A`.
    pub fn trace_with(&self, a: &CMatrix) -> Affine {
        let mut out = Affine::default();
        for i in 0..self.n {
            out.add_term(self.diag_var(i), a[(i, i)].re);
            for j in i + 1..self.n {
                // A_ji X_ij + A_ij X_ji = 2 Re(A_ji X_ij)
                let c = a[(j, i)];
                out.add_term(self.re_var(i, j), 2.0 * c.re);
                out.add_term(self.im_var(i, j), -2.0 * c.im);
            }
        }
        out
    }

    /// `Re(h·X·hᴴ)`.
    pub fn quad(&self, h: &CVector) -> Affine {
        self.trace_with(&crate::linalg::gram(h))
    }

    pub fn value(&self, x: &[f64]) -> CMatrix {
        CMatrix::from_fn(self.n, self.n, |i, j| self.entry(i, j).eval(x))
    }

    /// Writes `m` into the variable slots of `x` (Hermitian part of `m`).
    pub fn store(&self, m: &CMatrix, x: &mut [f64]) {
        for i in 0..self.n {
            x[self.diag_var(i)] = m[(i, i)].re;
            for j in i + 1..self.n {
                let z = (m[(i, j)] + m[(j, i)].conj()) * 0.5;
                x[self.re_var(i, j)] = z.re;
                x[self.im_var(i, j)] = z.im;
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ConeKind {
    Zero,
    Nonneg,
    SecondOrder,
    Exponential,
    /// Real symmetric PSD of the given order, rows in scaled upper-triangle order.
    Psd(usize),
}

#[derive(Debug, Clone)]
struct Block {
    tag: String,
    kind: ConeKind,
    rows: Vec<Affine>,
    /// Order of the complex matrix when the block is a realified Hermitian LMI.
    complex_order: Option<usize>,
}

/// `min/max cᵀx` over a product of cones.
#[derive(Debug, Clone, Default)]
pub struct ConicProblem {
    n_vars: usize,
    names: Vec<String>,
    objective: Affine,
    maximize: bool,
    blocks: Vec<Block>,
    index: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolveStatus {
    Optimal,
    AlmostOptimal,
    PrimalInfeasible,
    DualInfeasible,
    MaxIterations,
    NumericalError,
    Other,
}

impl SolveStatus {
    pub fn has_solution(self) -> bool {
        matches!(self, SolveStatus::Optimal | SolveStatus::AlmostOptimal)
    }
}

fn map_status(s: SolverStatus) -> SolveStatus {
    match s {
        SolverStatus::Solved => SolveStatus::Optimal,
        SolverStatus::AlmostSolved => SolveStatus::AlmostOptimal,
        SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => {
            SolveStatus::PrimalInfeasible
        }
        SolverStatus::DualInfeasible | SolverStatus::AlmostDualInfeasible => {
            SolveStatus::DualInfeasible
        }
        SolverStatus::MaxIterations | SolverStatus::MaxTime => SolveStatus::MaxIterations,
        SolverStatus::NumericalError | SolverStatus::InsufficientProgress => {
            SolveStatus::NumericalError
        }
        _ => SolveStatus::Other,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    pub tol: f64,
    pub max_iter: u32,
    /// Fraction of the distance to the cone boundary taken per step.
    pub max_step_fraction: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            tol: 1e-8,
            max_iter: 200,
            max_step_fraction: 0.95,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ConicSolution {
    pub status: SolveStatus,
    /// Primal values; empty unless a solution was found.
    pub x: Vec<f64>,
    /// Dual values per backend row; empty unless a solution was found.
    pub z: Vec<f64>,
    /// Objective in the sense of the problem (maximized value for maximization).
    pub objective: f64,
    pub duality_gap: f64,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub iterations: u32,
    row_offsets: Vec<usize>,
}

/// Multipliers looked up by constraint tag.
#[derive(Debug, Clone, Default)]
pub struct DualInfo {
    pub scalars: BTreeMap<String, f64>,
    pub vectors: BTreeMap<String, Vec<f64>>,
    pub matrices: BTreeMap<String, CMatrix>,
}

impl DualInfo {
    pub fn scalar(&self, tag: &str) -> Result<f64> {
        self.scalars
            .get(tag)
            .copied()
            .ok_or_else(|| Error::MissingDual(tag.to_string()))
    }

    pub fn vector(&self, tag: &str) -> Result<&[f64]> {
        self.vectors
            .get(tag)
            .map(|v| v.as_slice())
            .ok_or_else(|| Error::MissingDual(tag.to_string()))
    }

    pub fn matrix(&self, tag: &str) -> Result<&CMatrix> {
        self.matrices
            .get(tag)
            .ok_or_else(|| Error::MissingDual(tag.to_string()))
    }
}

/// Position of `(i, j)`, `i ≤ j`, in the column-major upper-triangle vector.
pub fn triu_index(i: usize, j: usize) -> usize {
    debug_assert!(i <= j);
    j * (j + 1) / 2 + i
}

/// Symmetric matrix from a scaled upper-triangle vector.
pub fn smat(v: &[f64], n: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, n, |i, j| {
        let (a, b) = if i <= j { (i, j) } else { (j, i) };
        let x = v[triu_index(a, b)];
        if a == b {
            x
        } else {
            x / SQRT2
        }
    })
}

/// Real embedding `[[Re H, −Im H], [Im H, Re H]]` of a Hermitian matrix.
pub fn embed_complex_psd(h: &CMatrix) -> Result<DMatrix<f64>> {
    let asym = hermitian_asymmetry(h);
    if asym > 1e-9 {
        return Err(Error::NotHermitian(asym));
    }
    let n = h.nrows();
    Ok(DMatrix::from_fn(2 * n, 2 * n, |i, j| {
        let z = h[(i % n, j % n)];
        match (i < n, j < n) {
            (true, true) | (false, false) => z.re,
            (true, false) => -z.im,
            (false, true) => z.im,
        }
    }))
}

/// Complex multiplier `Ω` with `Re Tr(H·Ω) = Tr(E(H)·Z)` for a real dual `Z`
/// of an embedded Hermitian constraint.
pub fn deembed_dual(z: &DMatrix<f64>) -> CMatrix {
    let n = z.nrows() / 2;
    CMatrix::from_fn(n, n, |i, j| {
        let re = z[(i, j)] + z[(i + n, j + n)];
        let im = z[(i + n, j)] - z[(i, j + n)];
        C64::new(re, im)
    })
}

impl ConicProblem {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn n_vars(&self) -> usize {
        self.n_vars
    }

    pub fn n_rows(&self) -> usize {
        self.blocks.iter().map(|b| b.rows.len()).sum()
    }

    pub fn n_blocks(&self) -> usize {
        self.blocks.len()
    }

    pub fn tags(&self) -> impl Iterator<Item = &str> {
        self.blocks.iter().map(|b| b.tag.as_str())
    }

    pub fn block_kind(&self, tag: &str) -> Option<ConeKind> {
        self.index.get(tag).map(|&i| self.blocks[i].kind)
    }

    pub fn scalar(&mut self, name: impl Into<String>) -> Var {
        self.names.push(name.into());
        self.n_vars += 1;
        Var(self.n_vars - 1)
    }

    pub fn hermitian(&mut self, name: &str, n: usize) -> HermVar {
        let v = HermVar {
            n,
            offset: self.n_vars,
        };
        for i in 0..n * n {
            self.names.push(format!("{name}[{i}]"));
        }
        self.n_vars += n * n;
        v
    }

    pub fn maximize(&mut self, obj: Affine) {
        self.objective = obj.compact();
        self.maximize = true;
    }

    pub fn minimize(&mut self, obj: Affine) {
        self.objective = obj.compact();
        self.maximize = false;
    }

    fn push(&mut self, tag: &str, kind: ConeKind, rows: Vec<Affine>, complex_order: Option<usize>) {
        assert!(
            !self.index.contains_key(tag),
            "duplicate constraint tag {tag}"
        );
        for r in &rows {
            for &(i, _) in &r.terms {
                assert!(i < self.n_vars, "constraint {tag} references undeclared variable {i}");
            }
        }
        self.index.insert(tag.to_string(), self.blocks.len());
        self.blocks.push(Block {
            tag: tag.to_string(),
            kind,
            rows: rows.into_iter().map(Affine::compact).collect(),
            complex_order,
        });
    }

    /// `a = 0` componentwise.
    pub fn add_eq(&mut self, tag: &str, rows: Vec<Affine>) {
        self.push(tag, ConeKind::Zero, rows, None);
    }

    /// `a ≥ 0`.
    pub fn add_nonneg(&mut self, tag: &str, a: Affine) {
        self.push(tag, ConeKind::Nonneg, vec![a], None);
    }

    /// `rows[0] ≥ ‖rows[1..]‖₂`.
    pub fn add_soc(&mut self, tag: &str, rows: Vec<Affine>) {
        assert!(rows.len() >= 2);
        self.push(tag, ConeKind::SecondOrder, rows, None);
    }

    /// `y·exp(x/y) ≤ z`, `y > 0`.
    pub fn add_exp(&mut self, tag: &str, x: Affine, y: Affine, z: Affine) {
        self.push(tag, ConeKind::Exponential, vec![x, y, z], None);
    }

    /// Real symmetric LMI given by its upper triangle `upper(i, j)`, `i ≤ j`.
    pub fn add_psd_sym(&mut self, tag: &str, n: usize, upper: impl Fn(usize, usize) -> Affine) {
        let mut rows = vec![Affine::default(); n * (n + 1) / 2];
        for j in 0..n {
            for i in 0..=j {
                let a = upper(i, j);
                rows[triu_index(i, j)] = if i == j { a } else { a.scale(SQRT2) };
            }
        }
        self.push(tag, ConeKind::Psd(n), rows, None);
    }

    /// Hermitian LMI `M ⪰ 0`, realified.
    pub fn add_psd_herm(&mut self, tag: &str, m: &CMatExpr) {
        let n = m.n;
        let mut rows = vec![Affine::default(); n * (2 * n + 1)];
        for j in 0..2 * n {
            for i in 0..=j {
                let e = m.get(i % n, j % n);
                let a = match (i < n, j < n) {
                    (true, true) | (false, false) => e.re.clone(),
                    (true, false) => -e.im.clone(),
                    (false, true) => e.im.clone(),
                };
                rows[triu_index(i, j)] = if i == j { a } else { a.scale(SQRT2) };
            }
        }
        self.push(tag, ConeKind::Psd(2 * n), rows, Some(n));
    }

    /// `X ⪰ 0` for a Hermitian variable.
    pub fn add_psd_var(&mut self, tag: &str, x: &HermVar) {
        if x.n == 1 {
            let e = x.entry(0, 0).re;
            self.push(tag, ConeKind::Nonneg, vec![e], None);
        } else {
            self.add_psd_herm(tag, &x.expr());
        }
    }

    /// Largest cone violation of each block at `x` (0 when satisfied).
    pub fn violations(&self, x: &[f64]) -> Vec<(String, f64)> {
        self.blocks
            .iter()
            .map(|b| {
                let v: Vec<f64> = b.rows.iter().map(|r| r.eval(x)).collect();
                let viol = match b.kind {
                    ConeKind::Zero => v.iter().map(|a| a.abs()).fold(0.0, f64::max),
                    ConeKind::Nonneg => v.iter().map(|a| (-a).max(0.0)).fold(0.0, f64::max),
                    ConeKind::SecondOrder => {
                        let tail = v[1..].iter().map(|a| a * a).sum::<f64>().sqrt();
                        (tail - v[0]).max(0.0)
                    }
                    ConeKind::Exponential => {
                        let (a, y, z) = (v[0], v[1], v[2]);
                        if y > 0.0 {
                            (y * (a / y).exp() - z).max(0.0)
                        } else {
                            // closure: y = 0 requires a ≤ 0, z ≥ 0
                            (-y).max(a.max(0.0)).max((-z).max(0.0))
                        }
                    }
                    ConeKind::Psd(n) => {
                        let ev = sym_eigen_real(&smat(&v, n));
                        (-ev.last().copied().unwrap_or(0.0)).max(0.0)
                    }
                };
                (b.tag.clone(), viol)
            })
            .collect()
    }

    pub fn max_violation(&self, x: &[f64]) -> f64 {
        self.violations(x).into_iter().map(|t| t.1).fold(0.0, f64::max)
    }

    pub fn objective_value(&self, x: &[f64]) -> f64 {
        self.objective.eval(x)
    }

    /// Sparse-triplet text dump of the problem (`min qᵀx s.t. b − Ax ∈ K`).
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "vars {}", self.n_vars);
        let _ = writeln!(
            s,
            "objective {} const {}",
            if self.maximize { "max" } else { "min" },
            self.objective.constant
        );
        for &(i, c) in &self.objective.terms {
            let _ = writeln!(s, "q {i} {c:e}");
        }
        for b in &self.blocks {
            let _ = writeln!(s, "block {} {:?} rows {}", b.tag, b.kind, b.rows.len());
            for (r, a) in b.rows.iter().enumerate() {
                let _ = writeln!(s, "b {r} {:e}", a.constant);
                for &(i, c) in &a.terms {
                    let _ = writeln!(s, "a {r} {i} {c:e}");
                }
            }
        }
        s
    }

    pub fn solve(&self, opts: &SolverOptions) -> Result<ConicSolution> {
        let n = self.n_vars;
        let m = self.n_rows();
        let mut ri = Vec::new();
        let mut ci = Vec::new();
        let mut vals = Vec::new();
        let mut b = Vec::with_capacity(m);
        let mut cones = Vec::with_capacity(self.blocks.len());
        let mut row_offsets = Vec::with_capacity(self.blocks.len());
        let mut row = 0;
        for blk in &self.blocks {
            row_offsets.push(row);
            for a in &blk.rows {
                for &(j, c) in &a.terms {
                    ri.push(row);
                    ci.push(j);
                    vals.push(-c);
                }
                b.push(a.constant);
                row += 1;
            }
            cones.push(match blk.kind {
                ConeKind::Zero => SupportedConeT::ZeroConeT(blk.rows.len()),
                ConeKind::Nonneg => SupportedConeT::NonnegativeConeT(blk.rows.len()),
                ConeKind::SecondOrder => SupportedConeT::SecondOrderConeT(blk.rows.len()),
                ConeKind::Exponential => SupportedConeT::ExponentialConeT(),
                ConeKind::Psd(k) => SupportedConeT::PSDTriangleConeT(k),
            });
        }
        let a = CscMatrix::new_from_triplets(m, n, ri, ci, vals);
        let p = CscMatrix::<f64>::zeros((n, n));
        let sign = if self.maximize { -1.0 } else { 1.0 };
        let mut q = vec![0.0; n];
        for &(j, c) in &self.objective.terms {
            q[j] += sign * c;
        }
        let solve_with = |step: f64| -> Result<DefaultSolver<f64>> {
            let settings = DefaultSettingsBuilder::default()
                .verbose(false)
                .max_step_fraction(step)
                .tol_gap_abs(opts.tol)
                .tol_gap_rel(opts.tol)
                .tol_feas(opts.tol)
                .max_iter(opts.max_iter)
                .max_threads(1)
                .presolve_enable(false)
                .chordal_decomposition_enable(false)
                .build()
                .map_err(|e| Error::Config(format!("solver settings: {e:?}")))?;
            let mut solver =
                DefaultSolver::new(&p, &q, &a, &b, &cones, settings).map_err(|e| Error::Solver {
                    status: SolveStatus::Other,
                    detail: format!("{e:?}"),
                })?;
            solver.solve();
            Ok(solver)
        };
        let mut solver = solve_with(opts.max_step_fraction)?;
        // a stalled or reduced-accuracy run is retried once with shorter steps
        let first = map_status(solver.solution.status);
        if matches!(
            first,
            SolveStatus::NumericalError | SolveStatus::MaxIterations | SolveStatus::AlmostOptimal
        ) {
            let retry = solve_with(0.8 * opts.max_step_fraction)?;
            let second = map_status(retry.solution.status);
            let better = match (first.has_solution(), second) {
                (_, SolveStatus::Optimal) | (false, SolveStatus::AlmostOptimal) => true,
                (true, SolveStatus::AlmostOptimal) => retry.solution.r_prim < solver.solution.r_prim,
                (false, _) => true,
                (true, _) => false,
            };
            if better {
                solver = retry;
            }
        }
        let sol = &solver.solution;
        let status = map_status(sol.status);
        let has = status.has_solution();
        Ok(ConicSolution {
            status,
            x: if has { sol.x.clone() } else { Vec::new() },
            z: if has { sol.z.clone() } else { Vec::new() },
            objective: sign * sol.obj_val + self.objective.constant,
            duality_gap: (sol.obj_val - sol.obj_val_dual).abs(),
            primal_residual: sol.r_prim,
            dual_residual: sol.r_dual,
            iterations: sol.iterations,
            row_offsets,
        })
    }

    /// Multipliers of every block: scalars for one-row blocks, matrices for
    /// PSD blocks (de-embedded for Hermitian LMIs), raw vectors otherwise.
    pub fn duals(&self, sol: &ConicSolution) -> Result<DualInfo> {
        if !sol.status.has_solution() {
            return Err(Error::Solver {
                status: sol.status,
                detail: "no multipliers without a solution".into(),
            });
        }
        let mut d = DualInfo::default();
        for (bi, blk) in self.blocks.iter().enumerate() {
            let off = sol.row_offsets[bi];
            let z = &sol.z[off..off + blk.rows.len()];
            match blk.kind {
                ConeKind::Psd(n) => {
                    let zm = smat(z, n);
                    let cm = match blk.complex_order {
                        Some(_) => deembed_dual(&zm),
                        None => zm.map(|v| C64::new(v, 0.0)),
                    };
                    d.matrices.insert(blk.tag.clone(), cm);
                }
                _ if blk.rows.len() == 1 => {
                    d.scalars.insert(blk.tag.clone(), z[0]);
                }
                _ => {
                    d.vectors.insert(blk.tag.clone(), z.to_vec());
                }
            }
        }
        Ok(d)
    }
}

impl ConicSolution {
    pub fn value(&self, v: Var) -> f64 {
        self.x[v.0]
    }

    pub fn eval(&self, a: &Affine) -> f64 {
        a.eval(&self.x)
    }

    pub fn herm(&self, h: &HermVar) -> CMatrix {
        h.value(&self.x)
    }

    pub fn require_solution(self) -> Result<Self> {
        if self.status.has_solution() {
            Ok(self)
        } else {
            Err(Error::Solver {
                status: self.status,
                detail: format!(
                    "primal residual {:.3e}, dual residual {:.3e}, {} iterations",
                    self.primal_residual, self.dual_residual, self.iterations
                ),
            })
        }
    }
}

/// Registers `[[a, b], [b, c]] ⪰ 0`, i.e. `a, c ≥ 0` and `b² ≤ a·c`.
pub fn lmi_2x2(p: &mut ConicProblem, tag: &str, a: Affine, b: Affine, c: Affine) {
    let entries = [a, b, c];
    p.add_psd_sym(tag, 2, |i, j| entries[i + j].clone());
}

/// Direction of an S-procedure certificate over the error ball
/// `‖Δh‖² ≤ σ‖ĥ‖²`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SProcForm {
    /// `(ĥ+Δh)·Q·(ĥ+Δh)ᴴ ≤ c` for every admissible `Δh`.
    Upper,
    /// `(ĥ+Δh)·Q·(ĥ+Δh)ᴴ ≥ c` for every admissible `Δh`.
    Lower,
}

/// Builds the S-procedure LMI certifying a quadratic bound over the error
/// ball. With `b = ĥQ` and `r² = σ‖ĥ‖²` the block is
///
/// - upper: `[[κI − Q, −bᴴ], [−b, c − ĥQĥᴴ − κr²]] ⪰ 0`,
/// - lower: `[[κI + Q, bᴴ], [b, ĥQĥᴴ − c − κr²]] ⪰ 0`,
///
/// where `κ ≥ 0` is the multiplier `weight` (its sign constraint is the
/// caller's responsibility).
pub fn sproc_lmi(
    p: &mut ConicProblem,
    tag: &str,
    form: SProcForm,
    weight: &Affine,
    q: &CMatExpr,
    c: &Affine,
    sigma: f64,
    h_est: &CVector,
) -> Result<()> {
    if !(sigma >= 0.0) {
        return Err(Error::Domain(format!("S-procedure: negative ratio {sigma}")));
    }
    sproc_lmi_radius(p, tag, form, weight, q, c, sigma * h_est.norm_squared(), h_est)
}

/// Factor applied to the last row and column of an S-procedure block
/// (a congruence, so the block's sign is unchanged). It brings the channel
/// terms to the scale of the covariance block; the multiplier of the
/// original block is `D·T·D` with `D = diag(I, d)`.
pub fn sproc_row_scale(h_est: &CVector) -> f64 {
    1.0 / h_est.norm().max(1.0)
}

/// [`sproc_lmi`] with the squared ball radius `r2` given directly.
#[allow(clippy::too_many_arguments)]
pub fn sproc_lmi_radius(
    p: &mut ConicProblem,
    tag: &str,
    form: SProcForm,
    weight: &Affine,
    q: &CMatExpr,
    c: &Affine,
    r2: f64,
    h_est: &CVector,
) -> Result<()> {
    let n = q.n;
    if h_est.len() != n {
        return Err(Error::Dimension(format!(
            "S-procedure: channel length {} vs matrix order {n}",
            h_est.len()
        )));
    }
    if !(r2 >= 0.0) {
        return Err(Error::Domain(format!("S-procedure: negative radius {r2}")));
    }
    let s = match form {
        SProcForm::Upper => -1.0,
        SProcForm::Lower => 1.0,
    };
    let d = sproc_row_scale(h_est);
    let b = CMatExpr::left_row(h_est, q);
    let hqh = CMatExpr::quad(h_est, q);
    let mut m = CMatExpr::zeros(n + 1);
    for i in 0..n {
        for j in 0..n {
            let mut e = q.get(i, j).mul_c(C64::new(s, 0.0));
            if i == j {
                e.re += weight;
            }
            *m.get_mut(i, j) = e;
        }
        // column entry (i, n) = s·conj(b_i), row entry (n, i) = s·b_i
        *m.get_mut(i, n) = b[i].conj().mul_c(C64::new(s * d, 0.0));
        *m.get_mut(n, i) = b[i].mul_c(C64::new(s * d, 0.0));
    }
    let corner = match form {
        SProcForm::Upper => c.clone() - hqh - weight.clone().scale(r2),
        SProcForm::Lower => hqh - c.clone() - weight.clone().scale(r2),
    };
    *m.get_mut(n, n) = CAffine::real(corner.scale(d * d));
    p.add_psd_herm(tag, &m);
    Ok(())
}
