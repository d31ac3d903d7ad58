//! Dense matrix analysis.
//!
//! Singular-value derived quantities (operator norm, condition number,
//! determinant magnitudes), weight-class membership and projection, and the
//! reduction of a 2-D convolution filter to a dense matrix.
//!
//! Every determinant-flavoured quantity goes through the singular values so
//! that `|det W|^{1/2}` and `det(WᵀW)^{1/4}` share one numerical pathway.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Singular values below `RANK_TOL * sigma_max` are treated as zero.
pub const RANK_TOL: f64 = 1e-14;

/// Slack allowed when checking class constraints.
pub const MEMBERSHIP_SLACK: f64 = 1e-9;

/// Lower clip applied to singular values during projection.
pub const SIGMA_FLOOR: f64 = 1e-6;

const SVD_MAX_SWEEPS: usize = 100;

/// Dense real matrix stored row-major.
///
/// Serializes as `{"rows": r, "cols": c, "data": [...]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawMatrix", into = "RawMatrix")]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct RawMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl TryFrom<RawMatrix> for Matrix {
    type Error = Error;

    fn try_from(raw: RawMatrix) -> Result<Self> {
        Matrix::new(raw.rows, raw.cols, raw.data)
    }
}

impl From<Matrix> for RawMatrix {
    fn from(m: Matrix) -> Self {
        RawMatrix {
            rows: m.rows,
            cols: m.cols,
            data: m.data,
        }
    }
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::Dimension(format!(
                "matrix dimensions must be positive, got {rows}x{cols}"
            )));
        }
        if data.len() != rows * cols {
            return Err(Error::Dimension(format!(
                "{rows}x{cols} matrix needs {} entries, got {}",
                rows * cols,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("{rows}x{cols} matrix")));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|row| row.len() != c) {
            return Err(Error::Dimension("ragged rows".into()));
        }
        Self::new(r, c, rows.concat())
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows > 0 && cols > 0, "matrix dimensions must be positive");
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    /// `rows x cols` matrix with `diag` on the main diagonal.
    pub fn diag_rect(rows: usize, cols: usize, diag: &[f64]) -> Self {
        let mut m = Self::zeros(rows, cols);
        for (i, &v) in diag.iter().enumerate().take(rows.min(cols)) {
            m.data[i * cols + i] = v;
        }
        m
    }

    pub fn diag(diag: &[f64]) -> Self {
        Self::diag_rect(diag.len(), diag.len(), diag)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t.data[j * self.rows + i] = self.get(i, j);
            }
        }
        t
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::Dimension(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.get(i, k);
                if a == 0.0 {
                    continue;
                }
                for j in 0..other.cols {
                    out.data[i * other.cols + j] += a * other.get(k, j);
                }
            }
        }
        Ok(out)
    }

    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.cols {
            return Err(Error::Dimension(format!(
                "{}x{} matrix applied to vector of length {}",
                self.rows,
                self.cols,
                x.len()
            )));
        }
        Ok(self
            .data
            .chunks_exact(self.cols)
            .map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum())
            .collect())
    }

    /// `Aᵀ y` without materializing the transpose.
    pub fn matvec_t(&self, y: &[f64]) -> Result<Vec<f64>> {
        if y.len() != self.rows {
            return Err(Error::Dimension(format!(
                "transpose of {}x{} matrix applied to vector of length {}",
                self.rows,
                self.cols,
                y.len()
            )));
        }
        let mut out = vec![0.0; self.cols];
        for (row, &yi) in self.data.chunks_exact(self.cols).zip(y) {
            for (o, a) in out.iter_mut().zip(row) {
                *o += a * yi;
            }
        }
        Ok(out)
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * factor).collect(),
        }
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn trace(&self) -> f64 {
        (0..self.rows.min(self.cols)).map(|i| self.get(i, i)).sum()
    }

    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn to_nalgebra(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.rows, self.cols, &self.data)
    }

    pub fn from_nalgebra(m: &DMatrix<f64>) -> Self {
        let (rows, cols) = m.shape();
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(m[(i, j)]);
            }
        }
        Self { rows, cols, data }
    }
}

/// Thin SVD `W = U diag(s) Vᵀ` with `s` sorted nonincreasing.
///
/// `left_vectors` is `rows x k`, `right_vectors` is `cols x k`, `k = min(rows, cols)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvdResult {
    pub singular_values: Vec<f64>,
    pub left_vectors: Matrix,
    pub right_vectors: Matrix,
}

impl SvdResult {
    pub fn sigma_max(&self) -> f64 {
        self.singular_values[0]
    }

    pub fn sigma_min(&self) -> f64 {
        *self.singular_values.last().expect("nonempty")
    }

    /// `U diag(values) Vᵀ` for replacement singular values.
    pub fn recompose_with(&self, values: &[f64]) -> Matrix {
        let u = &self.left_vectors;
        let v = &self.right_vectors;
        let (rows, cols, k) = (u.rows(), v.rows(), values.len());
        let mut out = Matrix::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                let mut acc = 0.0;
                for (p, &s) in values.iter().enumerate().take(k) {
                    acc += u.get(i, p) * s * v.get(j, p);
                }
                out.set(i, j, acc);
            }
        }
        out
    }

    pub fn recompose(&self) -> Matrix {
        self.recompose_with(&self.singular_values)
    }
}

/// Thin SVD by one-sided Jacobi rotations.
///
/// Accurate to working precision for clustered or repeated singular values,
/// where bidiagonal QR iterations can stall short of convergence.
pub fn svd(w: &Matrix) -> Result<SvdResult> {
    let (rows, cols) = (w.rows(), w.cols());
    if rows == 0 || cols == 0 {
        return Err(Error::Dimension(format!("SVD of empty {rows}x{cols} matrix")));
    }
    if w.data().iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("SVD input".into()));
    }
    if rows < cols {
        let t = svd(&w.transpose())?;
        return Ok(SvdResult {
            singular_values: t.singular_values,
            left_vectors: t.right_vectors,
            right_vectors: t.left_vectors,
        });
    }
    let k = cols;
    // columns of `a` and `v` stored contiguously
    let mut a: Vec<Vec<f64>> = (0..k).map(|j| (0..rows).map(|i| w.get(i, j)).collect()).collect();
    let mut v: Vec<Vec<f64>> = (0..k)
        .map(|j| (0..k).map(|i| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();
    let dot = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| p * q).sum::<f64>();
    let rotate = |cols: &mut Vec<Vec<f64>>, i: usize, j: usize, c: f64, s: f64| {
        for r in 0..cols[i].len() {
            let (x, y) = (cols[i][r], cols[j][r]);
            cols[i][r] = c * x - s * y;
            cols[j][r] = s * x + c * y;
        }
    };

    let mut converged = false;
    for _ in 0..SVD_MAX_SWEEPS {
        let mut rotated = false;
        for i in 0..k {
            for j in i + 1..k {
                let alpha = dot(&a[i], &a[i]);
                let beta = dot(&a[j], &a[j]);
                let gamma = dot(&a[i], &a[j]);
                if gamma == 0.0 || gamma.abs() <= f64::EPSILON * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + zeta.hypot(1.0));
                let c = 1.0 / t.hypot(1.0);
                let s = c * t;
                rotate(&mut a, i, j, c, s);
                rotate(&mut v, i, j, c, s);
            }
        }
        if !rotated {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::SvdNonConvergence { rows, cols });
    }

    let norms: Vec<f64> = a.iter().map(|col| dot(col, col).sqrt()).collect();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&x, &y| norms[y].total_cmp(&norms[x]));
    let scale = norms[order[0]];

    let mut left: Vec<Vec<f64>> = Vec::with_capacity(k);
    let mut values = Vec::with_capacity(k);
    let mut right = Matrix::zeros(cols, k);
    for (dst, &src) in order.iter().enumerate() {
        let sigma = norms[src];
        values.push(sigma);
        for r in 0..cols {
            right.set(r, dst, v[src][r]);
        }
        if sigma > RANK_TOL * scale && sigma > 0.0 {
            left.push(a[src].iter().map(|x| x / sigma).collect());
        } else {
            left.push(complete_orthonormal(&left, rows));
        }
    }
    let mut left_m = Matrix::zeros(rows, k);
    for (p, col) in left.iter().enumerate() {
        for (r, x) in col.iter().enumerate() {
            left_m.set(r, p, *x);
        }
    }
    Ok(SvdResult {
        singular_values: values,
        left_vectors: left_m,
        right_vectors: right,
    })
}

/// Unit vector orthogonal to all of `basis`, by Gram-Schmidt on the standard basis.
fn complete_orthonormal(basis: &[Vec<f64>], dim: usize) -> Vec<f64> {
    let mut best = vec![0.0; dim];
    let mut best_norm = -1.0;
    for e in 0..dim {
        let mut x = vec![0.0; dim];
        x[e] = 1.0;
        for _ in 0..2 {
            for b in basis {
                let proj: f64 = b.iter().zip(&x).map(|(p, q)| p * q).sum();
                for (xi, bi) in x.iter_mut().zip(b) {
                    *xi -= proj * bi;
                }
            }
        }
        let n = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n > best_norm {
            best_norm = n;
            best = x;
        }
    }
    best.iter().map(|v| v / best_norm).collect()
}

/// Largest singular value.
pub fn operator_norm(w: &Matrix) -> Result<f64> {
    Ok(svd(w)?.sigma_max())
}

fn require_square(w: &Matrix) -> Result<()> {
    if w.is_square() {
        Ok(())
    } else {
        Err(Error::NotSquare {
            rows: w.rows(),
            cols: w.cols(),
        })
    }
}

fn is_rank_deficient(values: &[f64]) -> bool {
    let max = values[0];
    let min = *values.last().expect("nonempty");
    max == 0.0 || min < RANK_TOL * max
}

/// `sigma_max / sigma_min`, or `f64::INFINITY` for numerically singular input.
pub fn condition_number(w: &Matrix) -> Result<f64> {
    require_square(w)?;
    let s = svd(w)?.singular_values;
    Ok(condition_from_values(&s))
}

pub(crate) fn condition_from_values(s: &[f64]) -> f64 {
    if is_rank_deficient(s) {
        f64::INFINITY
    } else {
        s[0] / s[s.len() - 1]
    }
}

/// `|det W|` as the product of singular values.
pub fn det_abs(w: &Matrix) -> Result<f64> {
    require_square(w)?;
    Ok(svd(w)?.singular_values.iter().product())
}

/// `det(WᵀW)^{1/4}` for a tall or square matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GramDetQuarter {
    pub value: f64,
    /// Set when `sigma_min < 1e-14 sigma_max`; `value` is then 0.
    pub rank_deficient: bool,
}

pub fn gram_det_quarter(w: &Matrix) -> Result<GramDetQuarter> {
    if w.rows() < w.cols() {
        return Err(Error::WideMatrix {
            rows: w.rows(),
            cols: w.cols(),
        });
    }
    let s = svd(w)?.singular_values;
    if is_rank_deficient(&s) {
        return Ok(GramDetQuarter {
            value: 0.0,
            rank_deficient: true,
        });
    }
    Ok(GramDetQuarter {
        value: s.iter().product::<f64>().sqrt(),
        rank_deficient: false,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightClassKind {
    Invertible,
    Injective,
    Orthogonal,
}

/// Constraint set `{W : ‖W‖ <= C, det-term >= D}`.
///
/// The determinant term is `|det W|` for square kinds and `det(WᵀW)^{1/2}`
/// for injective (tall) matrices.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightClassSpec {
    pub kind: WeightClassKind,
    #[serde(rename = "C")]
    pub c: f64,
    #[serde(rename = "D")]
    pub d: f64,
}

impl WeightClassSpec {
    pub fn new(kind: WeightClassKind, c: f64, d: f64) -> Result<Self> {
        let spec = Self { kind, c, d };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.c.is_finite() && self.c > 0.0 && self.d.is_finite() && self.d > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "weight class needs C > 0 and D > 0, got C = {}, D = {}",
                self.c, self.d
            )));
        }
        Ok(())
    }

    /// Nonempty iff `C^dim >= D` (and, for orthogonal classes, `C >= 1 >= D`).
    pub fn check_feasible(&self, dim: usize) -> Result<()> {
        self.validate()?;
        let cap = self.c.powi(dim as i32);
        let orth_ok = self.kind != WeightClassKind::Orthogonal
            || (self.c >= 1.0 - MEMBERSHIP_SLACK && self.d <= 1.0 + MEMBERSHIP_SLACK);
        if cap < self.d || !orth_ok {
            return Err(Error::InfeasibleClass {
                c: self.c,
                d: dim,
                cap,
                floor: self.d,
            });
        }
        Ok(())
    }

    /// Number of singular values of a matrix of this shape under the class orientation.
    pub fn check_orientation(&self, w: &Matrix) -> Result<usize> {
        match self.kind {
            WeightClassKind::Invertible | WeightClassKind::Orthogonal => {
                require_square(w)?;
                Ok(w.rows())
            }
            WeightClassKind::Injective => {
                if w.rows() < w.cols() {
                    Err(Error::WideMatrix {
                        rows: w.rows(),
                        cols: w.cols(),
                    })
                } else {
                    Ok(w.cols())
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Violation {
    OperatorNorm,
    Determinant,
    Orthogonality,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Membership {
    pub member: bool,
    pub operator_norm: f64,
    /// `|det W|` (square) or `det(WᵀW)^{1/2}` (injective).
    pub det_term: f64,
    /// `‖WᵀW − I‖_F`.
    pub orthogonality_defect: f64,
    pub violations: Vec<Violation>,
}

pub fn class_membership(w: &Matrix, spec: &WeightClassSpec) -> Result<Membership> {
    spec.validate()?;
    spec.check_orientation(w)?;
    let s = svd(w)?;
    let operator_norm = s.sigma_max();
    let det_term: f64 = s.singular_values.iter().product();
    let gram = w.transpose().matmul(w)?;
    let orthogonality_defect = gram
        .data()
        .iter()
        .enumerate()
        .map(|(idx, v)| {
            let target = if idx / gram.cols() == idx % gram.cols() {
                1.0
            } else {
                0.0
            };
            (v - target).powi(2)
        })
        .sum::<f64>()
        .sqrt();

    let mut violations = Vec::new();
    if operator_norm > spec.c + MEMBERSHIP_SLACK {
        violations.push(Violation::OperatorNorm);
    }
    if det_term < spec.d - MEMBERSHIP_SLACK {
        violations.push(Violation::Determinant);
    }
    if spec.kind == WeightClassKind::Orthogonal && orthogonality_defect > MEMBERSHIP_SLACK {
        violations.push(Violation::Orthogonality);
    }
    Ok(Membership {
        member: violations.is_empty(),
        operator_norm,
        det_term,
        orthogonality_defect,
        violations,
    })
}

/// Maps `w` onto the weight class.
///
/// Members are returned unchanged. Otherwise singular values are clipped to
/// `[1e-6, C]`; if the determinant term still falls short of `D`, the smallest
/// singular values are raised first, each capped at `C`, until the floor is
/// met. The orthogonal kind returns the polar factor `U Vᵀ`.
pub fn project_to_class(w: &Matrix, spec: &WeightClassSpec) -> Result<Matrix> {
    let dim = spec.check_orientation(w)?;
    spec.check_feasible(dim)?;
    if class_membership(w, spec)?.member {
        return Ok(w.clone());
    }
    let s = svd(w)?;
    if spec.kind == WeightClassKind::Orthogonal {
        return Ok(s.recompose_with(&vec![1.0; dim]));
    }

    let floor = SIGMA_FLOOR.min(spec.c);
    let mut values: Vec<f64> = s
        .singular_values
        .iter()
        .map(|v| v.clamp(floor, spec.c))
        .collect();
    let mut product: f64 = values.iter().product();
    // values are sorted nonincreasing, so walk from the tail
    for i in (0..values.len()).rev() {
        if product >= spec.d {
            break;
        }
        let needed = values[i] * (spec.d / product);
        let raised = needed.min(spec.c);
        product *= raised / values[i];
        values[i] = raised;
    }
    Ok(s.recompose_with(&values))
}

/// Convolution filter reorganized as a dense matrix acting on row-major images.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvMatrix {
    pub matrix: Matrix,
    pub input_shape: (usize, usize),
    /// Full-convolution support: `(in_rows + f_rows - 1, in_cols + f_cols - 1)`.
    pub output_shape: (usize, usize),
}

/// Builds `A` with `A vec(x) = vec(y)`, `y[k][l] = Σ_{i,j} f[k-i][l-j] x[i][j]`.
///
/// Filter entries with out-of-range indices are zero. The output index set is
/// every `(k, l)` that receives at least one in-range term (full convolution).
pub fn conv_filter_to_matrix(filter: &Matrix, input_shape: (usize, usize)) -> Result<ConvMatrix> {
    let (in_r, in_c) = input_shape;
    if in_r == 0 || in_c == 0 {
        return Err(Error::Dimension(format!(
            "input shape must be positive, got {in_r}x{in_c}"
        )));
    }
    let (f_r, f_c) = (filter.rows(), filter.cols());
    let (out_r, out_c) = (in_r + f_r - 1, in_c + f_c - 1);
    let mut a = Matrix::zeros(out_r * out_c, in_r * in_c);
    for k in 0..out_r {
        for l in 0..out_c {
            let row = k * out_c + l;
            for i in k.saturating_sub(f_r - 1)..=k.min(in_r - 1) {
                for j in l.saturating_sub(f_c - 1)..=l.min(in_c - 1) {
                    a.set(row, i * in_c + j, filter.get(k - i, l - j));
                }
            }
        }
    }
    Ok(ConvMatrix {
        matrix: a,
        input_shape,
        output_shape: (out_r, out_c),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::SymmetricEigen;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
        let data = (0..rows * cols).map(|_| rng.random_range(-2.0..2.0)).collect();
        Matrix::new(rows, cols, data).unwrap()
    }

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs().max(1e-300)
    }

    // Oracle: |det| by partial-pivot Gaussian elimination.
    fn lu_det_abs(w: &Matrix) -> f64 {
        let n = w.rows();
        let mut a: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| w.get(i, j)).collect()).collect();
        let mut det = 1.0;
        for c in 0..n {
            let p = (c..n).max_by(|&x, &y| a[x][c].abs().total_cmp(&a[y][c].abs())).unwrap();
            a.swap(c, p);
            let piv = a[c][c];
            if piv == 0.0 {
                return 0.0;
            }
            det *= piv;
            for r in c + 1..n {
                let f = a[r][c] / piv;
                for k in c..n {
                    a[r][k] -= f * a[c][k];
                }
            }
        }
        det.abs()
    }

    fn power_iteration_norm(w: &Matrix) -> f64 {
        let mut x = vec![1.0; w.cols()];
        let mut lambda = 0.0;
        for _ in 0..20_000 {
            let y = w.matvec(&x).unwrap();
            let z = w.matvec_t(&y).unwrap();
            let norm = z.iter().map(|v| v * v).sum::<f64>().sqrt();
            let next = norm / x.iter().map(|v| v * v).sum::<f64>().sqrt();
            x = z.iter().map(|v| v / norm).collect();
            if (next - lambda).abs() < 1e-15 * next {
                lambda = next;
                break;
            }
            lambda = next;
        }
        lambda.sqrt()
    }

    #[test]
    fn svd_simple_cases() {
        assert_eq!(svd(&Matrix::identity(3)).unwrap().singular_values, vec![1.0; 3]);
        let s = svd(&Matrix::diag(&[3.0, 1.0])).unwrap().singular_values;
        assert!((s[0] - 3.0).abs() < 1e-14 && (s[1] - 1.0).abs() < 1e-14);
        let s = svd(&Matrix::diag(&[1.0, 3.0])).unwrap().singular_values;
        assert!((s[0] - 3.0).abs() < 1e-14, "sorted nonincreasing");
    }

    #[test]
    fn svd_matches_eigen_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let w = random_matrix(&mut rng, 3, 2);
            let gram = w.transpose().matmul(&w).unwrap().to_nalgebra();
            let mut eig: Vec<f64> = SymmetricEigen::new(gram).eigenvalues.iter().map(|v| v.max(0.0).sqrt()).collect();
            eig.sort_by(|a, b| b.total_cmp(a));
            let s = svd(&w).unwrap();
            for (a, b) in s.singular_values.iter().zip(&eig) {
                assert!(rel(*a, *b) < 1e-8, "{a} vs {b}");
            }
            let err = s.recompose().max_abs_diff(&w);
            assert!(err <= 1e-10 * w.frobenius_norm().max(1.0));
        }
    }

    #[test]
    fn operator_norm_cases() {
        assert_eq!(operator_norm(&Matrix::identity(4)).unwrap(), 1.0);
        assert!((operator_norm(&Matrix::diag(&[2.0, 0.5])).unwrap() - 2.0).abs() < 1e-15);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..10 {
            let w = random_matrix(&mut rng, 4, 4);
            let a = operator_norm(&w).unwrap();
            assert!(rel(a, power_iteration_norm(&w)) < 1e-8);
            assert_eq!(a, svd(&w).unwrap().singular_values[0]);
        }
    }

    #[test]
    fn condition_number_cases() {
        let c = (0.3f64).cos();
        let s = (0.3f64).sin();
        let q = Matrix::from_rows(&[vec![c, -s], vec![s, c]]).unwrap();
        assert!((condition_number(&q).unwrap() - 1.0).abs() < 1e-12);
        assert!((condition_number(&Matrix::diag(&[4.0, 2.0])).unwrap() - 2.0).abs() < 1e-14);
        let sing = Matrix::from_rows(&[vec![1.0, 1.0], vec![1.0, 1.0]]).unwrap();
        assert!(condition_number(&sing).unwrap().is_infinite());
        assert!(matches!(
            condition_number(&Matrix::zeros(2, 3)),
            Err(Error::NotSquare { .. })
        ));
    }

    #[test]
    fn det_abs_cases() {
        assert!((det_abs(&Matrix::identity(3)).unwrap() - 1.0).abs() < 1e-15);
        assert!((det_abs(&Matrix::diag(&[2.0, 3.0])).unwrap() - 6.0).abs() < 1e-14);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..10 {
            let w = random_matrix(&mut rng, 4, 4);
            assert!(rel(det_abs(&w).unwrap(), lu_det_abs(&w)) < 1e-8);
        }
        assert!(det_abs(&Matrix::zeros(3, 2)).is_err());
    }

    #[test]
    fn gram_det_quarter_cases() {
        let r = 0.5f64.sqrt();
        let iso = Matrix::from_rows(&[vec![r, 0.0], vec![r, 0.0], vec![0.0, 1.0]]).unwrap();
        assert!((gram_det_quarter(&iso).unwrap().value - 1.0).abs() < 1e-14);
        let emb = Matrix::diag_rect(3, 2, &[2.0, 3.0]);
        assert!((gram_det_quarter(&emb).unwrap().value - 6f64.sqrt()).abs() < 1e-14);

        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..10 {
            let w = random_matrix(&mut rng, 4, 3);
            let gram = w.transpose().matmul(&w).unwrap();
            let oracle = lu_det_abs(&gram).powf(0.25);
            assert!(rel(gram_det_quarter(&w).unwrap().value, oracle) < 1e-8);
        }

        assert!(matches!(
            gram_det_quarter(&Matrix::zeros(2, 3)),
            Err(Error::WideMatrix { .. })
        ));
        let deficient = Matrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 4.0], vec![0.0, 0.0]]).unwrap();
        let g = gram_det_quarter(&deficient).unwrap();
        assert!(g.rank_deficient && g.value == 0.0);
    }

    #[test]
    fn membership_cases() {
        let inv11 = WeightClassSpec::new(WeightClassKind::Invertible, 1.0, 1.0).unwrap();
        assert!(class_membership(&Matrix::identity(3), &inv11).unwrap().member);

        let m = class_membership(&Matrix::diag(&[2.0, 2.0]), &inv11).unwrap();
        assert!(!m.member);
        assert!(m.violations.contains(&Violation::OperatorNorm));

        let half = WeightClassSpec::new(WeightClassKind::Invertible, 1.0, 0.5).unwrap();
        let m = class_membership(&Matrix::identity(2).scaled(0.5), &half).unwrap();
        assert!(!m.member);
        assert_eq!(m.violations, vec![Violation::Determinant]);
        assert!((m.det_term - 0.25).abs() < 1e-15);

        assert!(class_membership(&Matrix::zeros(2, 3), &inv11).is_err());
        let orth = WeightClassSpec::new(WeightClassKind::Orthogonal, 1.0, 1.0).unwrap();
        let m = class_membership(&Matrix::diag(&[1.0, -1.0]), &orth).unwrap();
        assert!(m.member && m.orthogonality_defect == 0.0);
    }

    #[test]
    fn projection_cases() {
        let spec = WeightClassSpec::new(WeightClassKind::Invertible, 2.0, 1.0).unwrap();
        let member = Matrix::from_rows(&[vec![1.2, 0.3], vec![-0.1, 1.1]]).unwrap();
        assert!(project_to_class(&member, &spec).unwrap().max_abs_diff(&member) <= 1e-12);

        let p = project_to_class(&Matrix::diag(&[3.0, 3.0]), &spec).unwrap();
        assert!(p.max_abs_diff(&Matrix::diag(&[2.0, 2.0])) < 1e-12);

        let p = project_to_class(&Matrix::diag(&[2.0, 0.1]), &spec).unwrap();
        assert!(p.max_abs_diff(&Matrix::diag(&[2.0, 0.5])) < 1e-12, "{p:?}");

        let empty = WeightClassSpec::new(WeightClassKind::Invertible, 1.0, 2.0).unwrap();
        assert!(matches!(
            project_to_class(&Matrix::identity(2), &empty),
            Err(Error::InfeasibleClass { .. })
        ));
    }

    // Oracle for the minimal-change repair: search diagonal repairs diag(a, b)
    // with a, b in [0, 2] on a fine grid, keep members, and confirm no member is
    // closer (in max-entry distance) to diag(2, 0.1) than the projection.
    #[test]
    fn projection_repair_is_minimal_on_grid() {
        let spec = WeightClassSpec::new(WeightClassKind::Invertible, 2.0, 1.0).unwrap();
        let target = Matrix::diag(&[2.0, 0.1]);
        let p = project_to_class(&target, &spec).unwrap();
        assert!(class_membership(&p, &spec).unwrap().member);
        let dist = p.max_abs_diff(&target);
        let steps = 400;
        let mut best = f64::INFINITY;
        for ia in 0..=steps {
            for ib in 0..=steps {
                let a = 2.0 * ia as f64 / steps as f64;
                let b = 2.0 * ib as f64 / steps as f64;
                if a * b >= 1.0 - 1e-12 {
                    let cand = Matrix::diag(&[a, b]);
                    best = best.min(cand.max_abs_diff(&target));
                }
            }
        }
        assert!(dist <= best + 1e-12, "projection distance {dist}, grid best {best}");
    }

    // Repeated singular values used to come back off by ~1e-5.
    #[test]
    fn svd_repeated_singular_values() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let q = random_matrix(&mut rng, 3, 3).to_nalgebra().qr().q();
        let r = random_matrix(&mut rng, 3, 3).to_nalgebra().qr().q();
        let w = Matrix::from_nalgebra(&(&q * Matrix::diag(&[2.0, 2.0, 0.2]).to_nalgebra() * r.transpose()));
        let s = svd(&w).unwrap();
        for (got, want) in s.singular_values.iter().zip([2.0, 2.0, 0.2]) {
            assert!((got - want).abs() < 1e-12, "{:?}", s.singular_values);
        }
        assert!(s.recompose().max_abs_diff(&w) < 1e-12);
        let spec = WeightClassSpec::new(WeightClassKind::Invertible, 1.5, 0.5).unwrap();
        let p = project_to_class(&w, &spec).unwrap();
        assert!(class_membership(&p, &spec).unwrap().member);
    }

    #[test]
    fn orthogonal_projection_is_polar_factor() {
        let spec = WeightClassSpec::new(WeightClassKind::Orthogonal, 1.0, 1.0).unwrap();
        let w = Matrix::from_rows(&[vec![2.0, 0.5], vec![0.1, 0.7]]).unwrap();
        let p = project_to_class(&w, &spec).unwrap();
        assert!(class_membership(&p, &spec).unwrap().member);
    }

    // Oracle: explicit double-loop full convolution.
    fn direct_conv(f: &Matrix, x: &Matrix) -> Vec<f64> {
        let (fr, fc) = (f.rows() as isize, f.cols() as isize);
        let (nr, nc) = (x.rows() as isize, x.cols() as isize);
        let mut out = Vec::new();
        for k in 0..nr + fr - 1 {
            for l in 0..nc + fc - 1 {
                let mut acc = 0.0;
                for i in 0..nr {
                    for j in 0..nc {
                        let (p, q) = (k - i, l - j);
                        if (0..fr).contains(&p) && (0..fc).contains(&q) {
                            acc += f.get(p as usize, q as usize) * x.get(i as usize, j as usize);
                        }
                    }
                }
                out.push(acc);
            }
        }
        out
    }

    #[test]
    fn conv_unit_and_scalar_filters() {
        let a = conv_filter_to_matrix(&Matrix::identity(1), (3, 4)).unwrap();
        assert_eq!(a.matrix, Matrix::identity(12));
        assert_eq!(a.output_shape, (3, 4));
        let a = conv_filter_to_matrix(&Matrix::diag(&[2.5]), (2, 2)).unwrap();
        assert_eq!(a.matrix, Matrix::identity(4).scaled(2.5));
    }

    #[test]
    fn conv_matches_direct_convolution() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let f = random_matrix(&mut rng, 2, 2);
        let a = conv_filter_to_matrix(&f, (3, 3)).unwrap();
        assert_eq!(a.output_shape, (4, 4));
        for _ in 0..100 {
            let x = random_matrix(&mut rng, 3, 3);
            assert_eq!(a.matrix.matvec(x.data()).unwrap(), direct_conv(&f, &x));
        }
    }

    #[test]
    fn matrix_json_shape() {
        let m = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let json = serde_json::to_string(&m).unwrap();
        assert_eq!(json, r#"{"rows":2,"cols":2,"data":[1.0,2.0,3.0,4.0]}"#);
        assert!(serde_json::from_str::<Matrix>(r#"{"rows":2,"cols":2,"data":[1.0]}"#).is_err());
    }

    fn square_strategy() -> impl Strategy<Value = Matrix> {
        (1usize..5).prop_flat_map(|n| {
            proptest::collection::vec(-3.0f64..3.0, n * n)
                .prop_map(move |d| Matrix::new(n, n, d).unwrap())
        })
    }

    proptest! {
        #[test]
        fn det_abs_is_multiplicative((w, v) in (1usize..5).prop_flat_map(|n| (
            proptest::collection::vec(-2.0f64..2.0, n * n).prop_map(move |d| Matrix::new(n, n, d).unwrap()),
            proptest::collection::vec(-2.0f64..2.0, n * n).prop_map(move |d| Matrix::new(n, n, d).unwrap()),
        ))) {
            let lhs = det_abs(&w.matmul(&v).unwrap()).unwrap();
            let rhs = det_abs(&w).unwrap() * det_abs(&v).unwrap();
            prop_assert!((lhs - rhs).abs() <= 1e-9 * rhs.abs().max(1e-3), "{} vs {}", lhs, rhs);
        }

        #[test]
        fn projection_lands_in_class_and_is_idempotent(w in square_strategy(), c in 0.5f64..3.0, logd in -2.0f64..0.5) {
            let n = w.rows();
            let d = logd.exp();
            let spec = WeightClassSpec { kind: WeightClassKind::Invertible, c, d };
            prop_assume!(spec.check_feasible(n).is_ok());
            let p = project_to_class(&w, &spec).unwrap();
            prop_assert!(class_membership(&p, &spec).unwrap().member);
            let pp = project_to_class(&p, &spec).unwrap();
            prop_assert!(pp.max_abs_diff(&p) <= 1e-10);
        }

        #[test]
        fn qr_orthogonal_has_unit_condition(w in square_strategy()) {
            let qr = w.to_nalgebra().qr();
            let q = Matrix::from_nalgebra(&qr.q());
            prop_assert!((condition_number(&q).unwrap() - 1.0).abs() <= 1e-9);
        }

        #[test]
        fn conv_is_linear(f in proptest::collection::vec(-2.0f64..2.0, 4),
                          x in proptest::collection::vec(-2.0f64..2.0, 9),
                          y in proptest::collection::vec(-2.0f64..2.0, 9)) {
            let filter = Matrix::new(2, 2, f).unwrap();
            let a = conv_filter_to_matrix(&filter, (3, 3)).unwrap().matrix;
            let sum: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a + b).collect();
            let lhs = a.matvec(&sum).unwrap();
            let ax = a.matvec(&x).unwrap();
            let ay = a.matvec(&y).unwrap();
            for ((l, p), q) in lhs.iter().zip(&ax).zip(&ay) {
                prop_assert!((l - (p + q)).abs() <= 1e-12 * (1.0 + l.abs()));
            }
        }
    }
}
