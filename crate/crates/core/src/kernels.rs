//! Sobolev-type scalar kernels, separable matrix-valued kernels `K = k·M`,
//! multi-task direct sums, and the Sobolev norm of the Gaussian-bump final map.
//!
//! The scalar kernels are Matérn kernels with smoothness `ν = s − d/2`, whose
//! Fourier transform decays like `(1 + ‖ω‖²)^{−s}`; their native space is
//! `H^s(ℝ^d)`. Only half-integer `ν ∈ {1/2, 3/2, 5/2}` is supported, where the
//! kernel has a closed form.
//!
//! Fourier convention: `f̂(ω) = ∫ f(x) e^{−i⟨x,ω⟩} dx`, Sobolev squared norm
//! `∫ (1 + ‖ω‖²)^s |f̂(ω)|² dω`. Absolute norm values depend on this convention;
//! ratios between bounds do not.

use nalgebra::SymmetricEigen;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matana::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaternSmoothness {
    Half,
    ThreeHalves,
    FiveHalves,
}

impl MaternSmoothness {
    pub fn from_nu(nu: f64) -> Result<Self> {
        const TOL: f64 = 1e-12;
        if (nu - 0.5).abs() < TOL {
            Ok(Self::Half)
        } else if (nu - 1.5).abs() < TOL {
            Ok(Self::ThreeHalves)
        } else if (nu - 2.5).abs() < TOL {
            Ok(Self::FiveHalves)
        } else {
            Err(Error::UnsupportedSmoothness { nu })
        }
    }

    pub fn nu(self) -> f64 {
        match self {
            Self::Half => 0.5,
            Self::ThreeHalves => 1.5,
            Self::FiveHalves => 2.5,
        }
    }

    /// Unit-amplitude Matérn profile at scaled distance `rho`.
    pub fn profile(self, rho: f64) -> f64 {
        match self {
            Self::Half => (-rho).exp(),
            Self::ThreeHalves => {
                let a = 3f64.sqrt() * rho;
                (1.0 + a) * (-a).exp()
            }
            Self::FiveHalves => {
                let a = 5f64.sqrt() * rho;
                (1.0 + a + 5.0 * rho * rho / 3.0) * (-a).exp()
            }
        }
    }
}

fn default_one() -> f64 {
    1.0
}

/// Radial scalar kernel `k_s(x, y) = a · φ_ν(‖x − y‖ / ℓ)` reproducing `H^s(ℝ^d)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalarKernelSpec {
    pub sobolev_order: f64,
    pub input_dim: usize,
    #[serde(default = "default_one")]
    pub length_scale: f64,
    #[serde(default = "default_one")]
    pub amplitude: f64,
    /// Replaces the tight `κ = Φ(0)` with a user-supplied (looser) constant.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kappa_override: Option<f64>,
}

impl ScalarKernelSpec {
    pub fn new(sobolev_order: f64, input_dim: usize) -> Result<Self> {
        let spec = Self {
            sobolev_order,
            input_dim,
            length_scale: 1.0,
            amplitude: 1.0,
            kappa_override: None,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Spec with `s = d/2 + ν`.
    pub fn with_smoothness(smoothness: MaternSmoothness, input_dim: usize) -> Self {
        Self {
            sobolev_order: input_dim as f64 / 2.0 + smoothness.nu(),
            input_dim,
            length_scale: 1.0,
            amplitude: 1.0,
            kappa_override: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::InvalidArgument("kernel input_dim must be positive".into()));
        }
        let half_d = self.input_dim as f64 / 2.0;
        if self.sobolev_order <= half_d {
            return Err(Error::SobolevOrder {
                layer: 0,
                s: self.sobolev_order,
                d: self.input_dim,
            });
        }
        if !(self.length_scale > 0.0 && self.length_scale.is_finite()) {
            return Err(Error::InvalidArgument("length_scale must be positive".into()));
        }
        if !(self.amplitude > 0.0 && self.amplitude.is_finite()) {
            return Err(Error::InvalidArgument("amplitude must be positive".into()));
        }
        if let Some(k) = self.kappa_override {
            if !(k > 0.0 && k.is_finite()) {
                return Err(Error::InvalidArgument("kappa_override must be positive".into()));
            }
        }
        self.smoothness().map(|_| ())
    }

    pub fn smoothness(&self) -> Result<MaternSmoothness> {
        MaternSmoothness::from_nu(self.sobolev_order - self.input_dim as f64 / 2.0)
    }
}

pub fn kernel_eval(spec: &ScalarKernelSpec, x: &[f64], y: &[f64]) -> Result<f64> {
    let smooth = spec.smoothness()?;
    if x.len() != spec.input_dim || y.len() != spec.input_dim {
        return Err(Error::Dimension(format!(
            "kernel on R^{} evaluated at points of length {} and {}",
            spec.input_dim,
            x.len(),
            y.len()
        )));
    }
    let dist = x
        .iter()
        .zip(y)
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        .sqrt();
    Ok(spec.amplitude * smooth.profile(dist / spec.length_scale))
}

/// Tight diagonal bound `sup_x k(x, x) = Φ(0)`, unless overridden.
pub fn kappa_bound(spec: &ScalarKernelSpec) -> f64 {
    spec.kappa_override.unwrap_or(spec.amplitude)
}

pub fn gram_matrix(spec: &ScalarKernelSpec, points: &[Vec<f64>]) -> Result<Matrix> {
    let n = points.len();
    if n == 0 {
        return Err(Error::InvalidArgument("gram matrix needs at least one point".into()));
    }
    let mut g = Matrix::zeros(n, n);
    for i in 0..n {
        g.set(i, i, kernel_eval(spec, &points[i], &points[i])?);
        for j in 0..i {
            let v = kernel_eval(spec, &points[i], &points[j])?;
            g.set(i, j, v);
            g.set(j, i, v);
        }
    }
    Ok(g)
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(m: &Matrix) -> f64 {
    SymmetricEigen::new(m.to_nalgebra())
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// Symmetric p.s.d. output matrix `M ∈ 𝕊₊^m`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Matrix", into = "Matrix")]
pub struct OutputMatrix(Matrix);

impl TryFrom<Matrix> for OutputMatrix {
    type Error = Error;

    fn try_from(m: Matrix) -> Result<Self> {
        Self::new(m)
    }
}

impl From<OutputMatrix> for Matrix {
    fn from(m: OutputMatrix) -> Self {
        m.0
    }
}

impl OutputMatrix {
    pub fn new(m: Matrix) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::InvalidOutputMatrix(format!(
                "must be square, got {}x{}",
                m.rows(),
                m.cols()
            )));
        }
        let asym = m.max_abs_diff(&m.transpose());
        if asym > 1e-12 {
            return Err(Error::InvalidOutputMatrix(format!(
                "not symmetric (max asymmetry {asym:e})"
            )));
        }
        let min_eig = min_eigenvalue(&m);
        if min_eig < -1e-10 {
            return Err(Error::InvalidOutputMatrix(format!(
                "not positive semi-definite (min eigenvalue {min_eig:e})"
            )));
        }
        Ok(Self(m))
    }

    pub fn identity(m: usize) -> Self {
        Self(Matrix::identity(m))
    }

    pub fn diagonal(values: &[f64]) -> Result<Self> {
        Self::new(Matrix::diag(values))
    }

    pub fn dim(&self) -> usize {
        self.0.rows()
    }

    pub fn matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn trace(&self) -> f64 {
        self.0.trace()
    }

    pub fn is_diagonal(&self) -> bool {
        let m = &self.0;
        (0..m.rows()).all(|i| (0..m.cols()).all(|j| i == j || m.get(i, j) == 0.0))
    }

    /// `vᵀ M v`.
    pub fn quadratic_form(&self, v: &[f64]) -> Result<f64> {
        let mv = self.0.matvec(v)?;
        Ok(mv.iter().zip(v).map(|(a, b)| a * b).sum())
    }

    pub fn is_positive_definite(&self) -> bool {
        self.0.to_nalgebra().cholesky().is_some()
    }
}

/// `Tr(k_gram ⊗ M) = Tr(k_gram) · Tr(M)`.
pub fn mvk_gram_trace(k_gram: &Matrix, m: &OutputMatrix) -> Result<f64> {
    if !k_gram.is_square() {
        return Err(Error::NotSquare {
            rows: k_gram.rows(),
            cols: k_gram.cols(),
        });
    }
    Ok(k_gram.trace() * m.trace())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskKernel {
    pub kernel: ScalarKernelSpec,
    pub output: OutputMatrix,
}

/// Direct sum over tasks of separable kernels `K_t = k_t M_t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiTaskKernelConfig {
    pub tasks: Vec<TaskKernel>,
}

impl MultiTaskKernelConfig {
    pub fn validate(&self) -> Result<()> {
        let first = self
            .tasks
            .first()
            .ok_or_else(|| Error::InvalidArgument("kernel config needs at least one task".into()))?;
        let (d, m) = (first.kernel.input_dim, first.output.dim());
        for (t, task) in self.tasks.iter().enumerate() {
            task.kernel.validate()?;
            if task.kernel.input_dim != d || task.output.dim() != m {
                return Err(Error::Dimension(format!(
                    "task {} has (d, m) = ({}, {}), expected ({d}, {m})",
                    t + 1,
                    task.kernel.input_dim,
                    task.output.dim()
                )));
            }
            if !task.output.is_diagonal() {
                return Err(Error::InvalidOutputMatrix(format!(
                    "task {} output matrix must be diagonal",
                    t + 1
                )));
            }
        }
        Ok(())
    }

    pub fn num_tasks(&self) -> usize {
        self.tasks.len()
    }

    pub fn input_dim(&self) -> usize {
        self.tasks[0].kernel.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.tasks[0].output.dim()
    }

    /// Shared diagonal bound: the largest per-task κ.
    pub fn kappa(&self) -> f64 {
        self.tasks
            .iter()
            .map(|t| kappa_bound(&t.kernel))
            .fold(0.0, f64::max)
    }
}

/// `U₀ = Σ_t √Tr(M_t)`.
pub fn u0(config: &MultiTaskKernelConfig) -> Result<f64> {
    config
        .tasks
        .iter()
        .enumerate()
        .map(|(t, task)| {
            let tr = task.output.trace();
            if tr < 0.0 {
                Err(Error::InvalidOutputMatrix(format!(
                    "task {} output matrix has negative trace {tr}",
                    t + 1
                )))
            } else {
                Ok(tr.sqrt())
            }
        })
        .sum()
}

/// Composite-quadrature settings for [`gaussian_bump_sobolev_norm_sq_with`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadratureOptions {
    pub initial_intervals: usize,
    pub rel_tol: f64,
    pub max_doublings: usize,
}

impl Default for QuadratureOptions {
    fn default() -> Self {
        Self {
            initial_intervals: 64,
            rel_tol: 1e-8,
            max_doublings: 20,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadratureResult {
    pub value: f64,
    pub intervals: usize,
    pub doublings: usize,
}

/// Surface area of the unit sphere in ℝ^d (2 for d = 1).
pub fn unit_sphere_area(d: usize) -> f64 {
    let half = d as f64 / 2.0;
    2.0 * std::f64::consts::PI.powf(half) / gamma(half)
}

// Gamma at positive integers and half-integers, which is all the sphere area needs.
fn gamma(x: f64) -> f64 {
    let twice = (2.0 * x).round() as i64;
    debug_assert!(twice >= 1 && ((2.0 * x) - twice as f64).abs() < 1e-12);
    let (mut acc, mut z) = if twice % 2 == 0 {
        (1.0, 1.0)
    } else {
        (std::f64::consts::PI.sqrt(), 0.5)
    };
    while z < x - 0.25 {
        acc *= z;
        z += 1.0;
    }
    acc
}

/// Squared `H^s(ℝ^d)` norm of `φ(x) = e^{−r‖x‖²}`.
///
/// Radial reduction: `|S^{d−1}| ∫₀^∞ (1 + ρ²)^s |φ̂(ρ)|² ρ^{d−1} dρ` with
/// `φ̂(ω) = (π/r)^{d/2} e^{−‖ω‖²/(4r)}`.
pub fn gaussian_bump_sobolev_norm_sq(r: f64, s: f64, d: usize) -> Result<f64> {
    gaussian_bump_sobolev_norm_sq_with(r, s, d, QuadratureOptions::default()).map(|q| q.value)
}

pub fn gaussian_bump_sobolev_norm_sq_with(
    r: f64,
    s: f64,
    d: usize,
    opts: QuadratureOptions,
) -> Result<QuadratureResult> {
    if !(r > 0.0 && r.is_finite()) || !(s >= 0.0 && s.is_finite()) || d == 0 {
        return Err(Error::InvalidArgument(format!(
            "Gaussian bump norm needs r > 0, s >= 0, d >= 1; got r = {r}, s = {s}, d = {d}"
        )));
    }
    let scale = (std::f64::consts::PI / r).powf(d as f64);
    let integrand = |rho: f64| {
        let log = s * (rho * rho).ln_1p() - rho * rho / (2.0 * r)
            + if d > 1 { (d - 1) as f64 * rho.ln() } else { 0.0 };
        if rho == 0.0 && d > 1 {
            0.0
        } else {
            log.exp()
        }
    };
    let upper = truncation_radius(r, s, d);
    let simpson = composite_simpson_sequence(&integrand, upper, opts)?;
    Ok(QuadratureResult {
        value: unit_sphere_area(d) * scale * simpson.value,
        ..simpson
    })
}

// Radius past which the log-integrand has dropped 60 nats below its peak and keeps falling.
fn truncation_radius(r: f64, s: f64, d: usize) -> f64 {
    let log_f = |rho: f64| {
        s * (rho * rho).ln_1p() - rho * rho / (2.0 * r) + (d as f64 - 1.0) * rho.max(1e-300).ln()
    };
    // peak of the log-integrand lies below sqrt(2r(s + d)) + 1
    let peak_bound = (2.0 * r * (s + d as f64)).sqrt() + 1.0;
    let steps = 200;
    let peak = (0..=steps)
        .map(|i| log_f(peak_bound * i as f64 / steps as f64))
        .fold(f64::NEG_INFINITY, f64::max);
    let mut rho = peak_bound;
    while log_f(rho) > peak - 60.0 {
        rho *= 1.25;
    }
    rho
}

fn composite_simpson_sequence(
    f: &dyn Fn(f64) -> f64,
    upper: f64,
    opts: QuadratureOptions,
) -> Result<QuadratureResult> {
    let mut n = opts.initial_intervals.max(2);
    if n % 2 == 1 {
        n += 1;
    }
    let simpson = |n: usize| {
        let h = upper / n as f64;
        let mut acc = f(0.0) + f(upper);
        for i in 1..n {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            acc += w * f(i as f64 * h);
        }
        acc * h / 3.0
    };
    let mut prev = simpson(n);
    for doubling in 1..=opts.max_doublings {
        n *= 2;
        let next = simpson(n);
        if (next - prev).abs() <= opts.rel_tol * next.abs() {
            return Ok(QuadratureResult {
                value: next,
                intervals: n,
                doublings: doubling,
            });
        }
        prev = next;
        if doubling == opts.max_doublings {
            return Err(Error::QuadratureNonConvergence {
                doublings: doubling,
                previous: prev,
                last: next,
            });
        }
    }
    Err(Error::QuadratureNonConvergence {
        doublings: 0,
        previous: prev,
        last: prev,
    })
}

/// One summand `e^{−r_t‖x‖²} M_t c_t` of the final map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalMapTerm {
    pub rate: u32,
    pub output: OutputMatrix,
    pub coeffs: Vec<f64>,
}

/// Final map `g(x) = Σ_t e^{−r_t‖x‖²} M_t c_t` on `ℝ^{d_L}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalMapSpec {
    pub terms: Vec<FinalMapTerm>,
    pub input_dim: usize,
    pub sobolev_order: f64,
}

impl FinalMapSpec {
    pub fn validate(&self) -> Result<()> {
        let first = self
            .terms
            .first()
            .ok_or_else(|| Error::InvalidArgument("final map needs at least one term".into()))?;
        let m = first.output.dim();
        for (t, term) in self.terms.iter().enumerate() {
            if term.rate < 1 {
                return Err(Error::InvalidArgument(format!(
                    "final map term {} has rate 0; rates are positive integers",
                    t + 1
                )));
            }
            if term.output.dim() != m || term.coeffs.len() != m {
                return Err(Error::Dimension(format!(
                    "final map term {} has M of size {} and c of length {}, expected {m}",
                    t + 1,
                    term.output.dim(),
                    term.coeffs.len()
                )));
            }
            if term.coeffs.iter().any(|c| !c.is_finite()) {
                return Err(Error::NonFinite(format!("final map term {} coefficients", t + 1)));
            }
        }
        if self.input_dim == 0 {
            return Err(Error::InvalidArgument("final map input_dim must be positive".into()));
        }
        Ok(())
    }

    pub fn output_dim(&self) -> usize {
        self.terms[0].output.dim()
    }

    /// `M_t c_t` for each term.
    pub fn term_vectors(&self) -> Vec<Vec<f64>> {
        self.terms
            .iter()
            .map(|t| t.output.matrix().matvec(&t.coeffs).expect("validated"))
            .collect()
    }
}

/// `‖g‖_{H^{⊕ s_L}} = √(Σ_t ‖φ_{r_t}‖²_{H^{s_L}} · c_tᵀ M_t c_t)`.
///
/// Uses the separable native-space rule `‖φ·v‖²_{H_{kM}} = ‖φ‖²_{H_k} vᵀ M⁻¹ v`
/// with `v = M_t c_t`, which requires every `M_t` to be positive definite.
pub fn g_norm(spec: &FinalMapSpec) -> Result<f64> {
    spec.validate()?;
    let mut total = 0.0;
    for (t, term) in spec.terms.iter().enumerate() {
        if !term.output.is_positive_definite() {
            return Err(Error::SingularOutputMatrix { task: t + 1 });
        }
        let bump = gaussian_bump_sobolev_norm_sq(term.rate as f64, spec.sobolev_order, spec.input_dim)?;
        total += bump * term.output.quadratic_form(&term.coeffs)?;
    }
    Ok(total.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs()
    }

    fn spec(nu: MaternSmoothness, d: usize) -> ScalarKernelSpec {
        ScalarKernelSpec::with_smoothness(nu, d)
    }

    #[test]
    fn matern_half_values() {
        let k = spec(MaternSmoothness::Half, 1);
        assert_eq!(kernel_eval(&k, &[0.3], &[0.3]).unwrap(), 1.0);
        assert!((kernel_eval(&k, &[0.0], &[1.0]).unwrap() - (-1f64).exp()).abs() < 1e-16);
    }

    #[test]
    fn matern_three_halves_against_series_oracle() {
        // (1 + a) e^{-a} with e^{-a} summed as a Taylor series in extended steps
        let a = 3f64.sqrt() * 0.7;
        let mut term = 1.0f64;
        let mut series = 1.0f64;
        for k in 1..60 {
            term *= -a / k as f64;
            series += term;
        }
        let oracle = (1.0 + a) * series;
        let k = spec(MaternSmoothness::ThreeHalves, 2);
        let got = kernel_eval(&k, &[0.0, 0.0], &[0.7, 0.0]).unwrap();
        assert!(rel(got, oracle) < 1e-12, "{got} vs {oracle}");
    }

    #[test]
    fn unsupported_smoothness_rejected() {
        assert!(matches!(
            ScalarKernelSpec::new(2.0, 2),
            Err(Error::UnsupportedSmoothness { .. })
        ));
        assert!(matches!(ScalarKernelSpec::new(1.0, 2), Err(Error::SobolevOrder { .. })));
        assert!(ScalarKernelSpec::new(1.5, 2).is_ok());
    }

    #[test]
    fn kappa_is_diagonal_value() {
        let mut k = spec(MaternSmoothness::FiveHalves, 3);
        assert_eq!(kappa_bound(&k), 1.0);
        k.amplitude = 2.5;
        assert_eq!(kappa_bound(&k), 2.5);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let max = (0..10_000)
            .map(|_| {
                let x: Vec<f64> = (0..3).map(|_| rng.random_range(-10.0..10.0)).collect();
                kernel_eval(&k, &x, &x).unwrap()
            })
            .fold(0.0, f64::max);
        assert_eq!(max, kappa_bound(&k));
    }

    #[test]
    fn gram_small_cases() {
        let k = spec(MaternSmoothness::Half, 2);
        assert_eq!(gram_matrix(&k, &[vec![1.0, 2.0]]).unwrap(), Matrix::identity(1));
        let g = gram_matrix(&k, &[vec![1.0, 2.0], vec![1.0, 2.0]]).unwrap();
        assert_eq!(g.data(), &[1.0, 1.0, 1.0, 1.0]);
        assert!(gram_matrix(&k, &[vec![1.0]]).is_err());
    }

    #[test]
    fn gram_is_psd_on_random_sets() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for trial in 0..50 {
            let nu = [MaternSmoothness::Half, MaternSmoothness::ThreeHalves, MaternSmoothness::FiveHalves][trial % 3];
            let d = 1 + trial % 3;
            let k = spec(nu, d);
            let n = 2 + trial % 7;
            let pts: Vec<Vec<f64>> = (0..n)
                .map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect())
                .collect();
            let g = gram_matrix(&k, &pts).unwrap();
            assert!(g.max_abs_diff(&g.transpose()) <= 1e-12);
            assert!(min_eigenvalue(&g) >= -1e-8);
            assert!((0..n).all(|i| g.get(i, i) == 1.0));
        }
    }

    fn kron_trace(a: &Matrix, b: &Matrix) -> f64 {
        let (n, m) = (a.rows(), b.rows());
        let mut k = Matrix::zeros(n * m, n * m);
        for i in 0..n {
            for j in 0..n {
                for p in 0..m {
                    for q in 0..m {
                        k.set(i * m + p, j * m + q, a.get(i, j) * b.get(p, q));
                    }
                }
            }
        }
        k.trace()
    }

    #[test]
    fn mvk_trace_cases() {
        assert_eq!(mvk_gram_trace(&Matrix::identity(3), &OutputMatrix::identity(2)).unwrap(), 6.0);
        let m = OutputMatrix::diagonal(&[1.0, 1.5]).unwrap();
        let k = gram_matrix(&spec(MaternSmoothness::Half, 1), &[vec![0.0], vec![1.0], vec![2.0], vec![5.0]]).unwrap();
        assert_eq!(mvk_gram_trace(&k, &m).unwrap(), 10.0);

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for n in 1..=8 {
            for mdim in 1..=4 {
                let pts: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.random_range(-1.0..1.0)]).collect();
                let kg = gram_matrix(&spec(MaternSmoothness::ThreeHalves, 1), &pts).unwrap();
                let diag: Vec<f64> = (0..mdim).map(|_| rng.random_range(0.0..3.0)).collect();
                let m = OutputMatrix::diagonal(&diag).unwrap();
                let explicit = kron_trace(&kg, m.matrix());
                assert!((mvk_gram_trace(&kg, &m).unwrap() - explicit).abs() <= 1e-12 * explicit);
            }
        }
    }

    fn task(m: OutputMatrix) -> TaskKernel {
        TaskKernel {
            kernel: spec(MaternSmoothness::Half, 1),
            output: m,
        }
    }

    #[test]
    fn u0_cases() {
        let c = MultiTaskKernelConfig {
            tasks: vec![task(OutputMatrix::identity(3))],
        };
        assert!((u0(&c).unwrap() - 3f64.sqrt()).abs() < 1e-15);
        let c = MultiTaskKernelConfig {
            tasks: vec![task(OutputMatrix::identity(4)), task(OutputMatrix::diagonal(&[9.0]).unwrap())],
        };
        assert_eq!(u0(&c).unwrap(), 5.0);
        assert!(c.validate().is_err(), "mixed output dims");

        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let diags: Vec<Vec<f64>> = (0..3).map(|_| (0..2).map(|_| rng.random_range(0.0..4.0)).collect()).collect();
        let c = MultiTaskKernelConfig {
            tasks: diags.iter().map(|d| task(OutputMatrix::diagonal(d).unwrap())).collect(),
        };
        let direct: f64 = diags.iter().map(|d| (d[0] + d[1]).sqrt()).sum();
        assert_eq!(u0(&c).unwrap(), direct);
    }

    #[test]
    fn output_matrix_validation() {
        assert!(OutputMatrix::new(Matrix::from_rows(&[vec![1.0, 2.0], vec![0.0, 1.0]]).unwrap()).is_err());
        assert!(OutputMatrix::diagonal(&[1.0, -1.0]).is_err());
        let dense = OutputMatrix::new(Matrix::from_rows(&[vec![2.0, 1.0], vec![1.0, 2.0]]).unwrap()).unwrap();
        assert!(!dense.is_diagonal());
        let c = MultiTaskKernelConfig {
            tasks: vec![task(dense)],
        };
        assert!(c.validate().is_err());
    }

    // Brute-force oracle: plain trapezoid on the full line with 10^6 nodes.
    fn trapezoid_1d(r: f64, s: f64) -> f64 {
        let half_width = 40.0 * (2.0 * r).sqrt() + 20.0;
        let n = 1_000_000;
        let h = 2.0 * half_width / n as f64;
        let f = |w: f64| (1.0 + w * w).powf(s) * (PI / r) * (-w * w / (2.0 * r)).exp();
        let mut acc = 0.5 * (f(-half_width) + f(half_width));
        for i in 1..n {
            acc += f(-half_width + i as f64 * h);
        }
        acc * h
    }

    #[test]
    fn sobolev_norm_parseval_case() {
        let v = gaussian_bump_sobolev_norm_sq(1.0, 0.0, 1).unwrap();
        let parseval = 2.0 * PI * (PI / 2.0).sqrt();
        assert!(rel(v, parseval) < 1e-8, "{v} vs {parseval}");
        assert!(rel(v, 7.874805) < 1e-6);
    }

    #[test]
    fn sobolev_norm_matches_trapezoid() {
        let v = gaussian_bump_sobolev_norm_sq(1.0, 1.0, 1).unwrap();
        assert!(rel(v, trapezoid_1d(1.0, 1.0)) < 1e-6);
        let v = gaussian_bump_sobolev_norm_sq(3.0, 2.5, 1).unwrap();
        assert!(rel(v, trapezoid_1d(3.0, 2.5)) < 1e-6);
    }

    #[test]
    fn sobolev_norm_higher_dimensions_closed_form() {
        // s = 1: ∫(1+‖ω‖²)|φ̂|² = (π/r)^d (2πr)^{d/2} (1 + d r)
        for d in 1..=4 {
            for r in [1.0, 2.0] {
                let exact = (PI / r).powi(d as i32) * (2.0 * PI * r).powf(d as f64 / 2.0) * (1.0 + d as f64 * r);
                let v = gaussian_bump_sobolev_norm_sq(r, 1.0, d).unwrap();
                assert!(rel(v, exact) < 1e-8, "d={d} r={r}: {v} vs {exact}");
            }
        }
    }

    #[test]
    fn sobolev_norm_stable_under_resolution_change() {
        for (r, s, d) in [(1.0, 1.5, 1), (2.0, 2.0, 2), (1.0, 3.5, 3), (5.0, 1.0, 4)] {
            let coarse = gaussian_bump_sobolev_norm_sq_with(r, s, d, QuadratureOptions { initial_intervals: 32, ..Default::default() }).unwrap();
            let fine = gaussian_bump_sobolev_norm_sq_with(r, s, d, QuadratureOptions { initial_intervals: 64, ..Default::default() }).unwrap();
            assert!(rel(coarse.value, fine.value) < 1e-8);
        }
    }

    #[test]
    fn sobolev_norm_nonconvergence_reports_iterates() {
        let err = gaussian_bump_sobolev_norm_sq_with(
            1.0,
            1.0,
            1,
            QuadratureOptions { initial_intervals: 2, rel_tol: 0.0, max_doublings: 3 },
        )
        .unwrap_err();
        assert!(matches!(err, Error::QuadratureNonConvergence { doublings: 3, .. }));
    }

    fn term(rate: u32, m: OutputMatrix, c: Vec<f64>) -> FinalMapTerm {
        FinalMapTerm { rate, output: m, coeffs: c }
    }

    #[test]
    fn g_norm_cases() {
        let g = FinalMapSpec {
            terms: vec![term(1, OutputMatrix::identity(2), vec![1.0, 0.0])],
            input_dim: 2,
            sobolev_order: 2.0,
        };
        let single = g_norm(&g).unwrap();
        assert!(rel(single, gaussian_bump_sobolev_norm_sq(1.0, 2.0, 2).unwrap().sqrt()) < 1e-14);

        let mut doubled = g.clone();
        doubled.terms[0].coeffs = vec![2.0, 0.0];
        assert!(rel(g_norm(&doubled).unwrap(), 2.0 * single) < 1e-14);

        let m1 = OutputMatrix::diagonal(&[2.0, 0.5]).unwrap();
        let m2 = OutputMatrix::diagonal(&[1.0, 3.0]).unwrap();
        let (c1, c2) = (vec![0.3, -1.0], vec![1.2, 0.4]);
        let two = FinalMapSpec {
            terms: vec![term(1, m1.clone(), c1.clone()), term(2, m2.clone(), c2.clone())],
            input_dim: 2,
            sobolev_order: 2.0,
        };
        let hand = gaussian_bump_sobolev_norm_sq(1.0, 2.0, 2).unwrap() * (2.0 * 0.09 + 0.5 * 1.0)
            + gaussian_bump_sobolev_norm_sq(2.0, 2.0, 2).unwrap() * (1.44 + 3.0 * 0.16);
        assert!(rel(g_norm(&two).unwrap(), hand.sqrt()) < 1e-10);

        let part = |t: FinalMapTerm| {
            g_norm(&FinalMapSpec { terms: vec![t], input_dim: 2, sobolev_order: 2.0 })
                .unwrap()
                .powi(2)
        };
        let additive = part(term(1, m1, c1)) + part(term(2, m2, c2));
        assert!(rel(g_norm(&two).unwrap().powi(2), additive) < 1e-12);
    }

    #[test]
    fn g_norm_rejects_singular_output() {
        let g = FinalMapSpec {
            terms: vec![
                term(1, OutputMatrix::identity(2), vec![1.0, 0.0]),
                term(1, OutputMatrix::diagonal(&[1.0, 0.0]).unwrap(), vec![1.0, 0.0]),
            ],
            input_dim: 1,
            sobolev_order: 1.0,
        };
        assert_eq!(g_norm(&g), Err(Error::SingularOutputMatrix { task: 2 }));
    }

    proptest! {
        #[test]
        fn sobolev_norm_increasing_in_s(r in 1u32..4, d in 1usize..4, s in 0.0f64..3.0) {
            let a = gaussian_bump_sobolev_norm_sq(r as f64, s, d).unwrap();
            let b = gaussian_bump_sobolev_norm_sq(r as f64, s + 0.5, d).unwrap();
            prop_assert!(b > a);
        }

        #[test]
        fn kernel_translation_invariant_diagonal(x in proptest::collection::vec(-50.0f64..50.0, 2)) {
            let k = spec(MaternSmoothness::ThreeHalves, 2);
            prop_assert_eq!(kernel_eval(&k, &x, &x).unwrap(), kappa_bound(&k));
        }
    }
}
