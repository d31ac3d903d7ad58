//! Feedforward networks `f = g ∘ b_L ∘ W_L ∘ σ_{L−1} ∘ b_{L−1} ∘ W_{L−1} ∘ … ∘ σ_1 ∘ b_1 ∘ W_1`,
//! bi-Lipschitz activations, and synthetic network generation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{FinalMapSpec, FinalMapTerm, MultiTaskKernelConfig, OutputMatrix, ScalarKernelSpec, TaskKernel};
use crate::matana::{svd, Matrix};

/// Elementwise activation.
///
/// `smoothed_leaky_relu(α, β)`: `σ(x) = αx + (1−α)·½(x + √(x² + β²))`, with
/// `σ′ ∈ (α, 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ActivationSpec {
    SmoothedLeakyRelu { alpha: f64, beta: f64 },
    Identity,
    Tanh,
}

impl ActivationSpec {
    pub fn validate(&self) -> Result<()> {
        if let Self::SmoothedLeakyRelu { alpha, beta } = *self {
            if !(alpha > 0.0 && alpha < 1.0) || !(beta > 0.0 && beta.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "smoothed_leaky_relu needs alpha in (0, 1) and beta > 0, got alpha = {alpha}, beta = {beta}"
                )));
            }
        }
        Ok(())
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::SmoothedLeakyRelu { .. } => "smoothed_leaky_relu",
            Self::Identity => "identity",
            Self::Tanh => "tanh",
        }
    }

    #[inline]
    pub fn apply(&self, x: f64) -> f64 {
        match *self {
            Self::SmoothedLeakyRelu { alpha, beta } => {
                alpha * x + (1.0 - alpha) * 0.5 * (x + x.hypot(beta))
            }
            Self::Identity => x,
            Self::Tanh => x.tanh(),
        }
    }

    #[inline]
    pub fn derivative(&self, x: f64) -> f64 {
        match *self {
            Self::SmoothedLeakyRelu { alpha, beta } => {
                alpha + (1.0 - alpha) * 0.5 * (1.0 + x / x.hypot(beta))
            }
            Self::Identity => 1.0,
            Self::Tanh => 1.0 - x.tanh().powi(2),
        }
    }

    /// `σ⁻¹(y)`; bisection for the smoothed leaky ReLU.
    pub fn inverse(&self, y: f64) -> Result<f64> {
        match *self {
            Self::Identity => Ok(y),
            Self::Tanh => {
                if y.abs() < 1.0 {
                    Ok(y.atanh())
                } else {
                    Err(Error::InvalidArgument(format!("tanh is not onto {y}")))
                }
            }
            Self::SmoothedLeakyRelu { alpha, .. } => {
                // αx < σ(x) <= αx + (1−α)β/2 for x < 0 and σ(x) > x, so the root is bracketed
                let mut lo = -(y.abs() / alpha) - 1.0 - self.smoothing_offset();
                let mut hi = y.abs() + 1.0;
                for _ in 0..200 {
                    let mid = 0.5 * (lo + hi);
                    if self.apply(mid) < y {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                    if hi - lo <= f64::EPSILON * mid.abs().max(1.0) {
                        break;
                    }
                }
                Ok(0.5 * (lo + hi))
            }
        }
    }

    fn smoothing_offset(&self) -> f64 {
        match *self {
            Self::SmoothedLeakyRelu { alpha, beta } => (1.0 - alpha) * beta / alpha,
            _ => 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DerivativeBounds {
    pub sup_deriv: f64,
    pub inf_deriv: f64,
}

/// Closed-form `(sup σ′, inf σ′)` over ℝ for bi-Lipschitz activations.
pub fn activation_derivative_bounds(act: &ActivationSpec) -> Result<DerivativeBounds> {
    act.validate()?;
    match *act {
        ActivationSpec::SmoothedLeakyRelu { alpha, .. } => Ok(DerivativeBounds {
            sup_deriv: 1.0,
            inf_deriv: alpha,
        }),
        ActivationSpec::Identity => Ok(DerivativeBounds {
            sup_deriv: 1.0,
            inf_deriv: 1.0,
        }),
        ActivationSpec::Tanh => Err(Error::NotBiLipschitz("tanh".into())),
    }
}

/// `‖det J_{σ⁻¹}‖_∞ · max_i ‖∂_i σ‖_∞ ≤ (1 / inf σ′)^d · sup σ′` for elementwise σ.
pub fn koopman_activation_norm_bound(act: &ActivationSpec, d: usize) -> Result<f64> {
    let b = activation_derivative_bounds(act)?;
    if b.inf_deriv <= 0.0 {
        return Err(Error::NotBiLipschitz(format!(
            "{} (inf derivative {} <= 0)",
            act.name(),
            b.inf_deriv
        )));
    }
    Ok(b.inf_deriv.recip().powi(d as i32) * b.sup_deriv)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    #[serde(rename = "W")]
    pub weight: Matrix,
    #[serde(rename = "b")]
    pub bias: Vec<f64>,
    #[serde(default)]
    pub activation: Option<ActivationSpec>,
    /// User-supplied `‖K_σ‖` replacing the first-order activation bound.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub activation_norm_override: Option<f64>,
}

impl LayerSpec {
    pub fn new(weight: Matrix, bias: Vec<f64>, activation: Option<ActivationSpec>) -> Self {
        Self {
            weight,
            bias,
            activation,
            activation_norm_override: None,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.rows()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub layers: Vec<LayerSpec>,
    pub final_map: FinalMapSpec,
    pub sobolev_orders: Vec<f64>,
    #[serde(rename = "T")]
    pub tasks: usize,
    pub m: usize,
}

impl NetworkSpec {
    /// Dimension chain `d_0, …, d_L`.
    pub fn widths(&self) -> Vec<usize> {
        let mut w = Vec::with_capacity(self.layers.len() + 1);
        if let Some(first) = self.layers.first() {
            w.push(first.in_dim());
        }
        w.extend(self.layers.iter().map(LayerSpec::out_dim));
        w
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    /// Matérn kernel of order `s_0` on `ℝ^{d_0}` per task, with `M_t` taken from `g`.
    pub fn default_kernel(&self) -> Result<MultiTaskKernelConfig> {
        let tasks = self
            .final_map
            .terms
            .iter()
            .map(|t| {
                Ok(TaskKernel {
                    kernel: ScalarKernelSpec::new(self.sobolev_orders[0], self.input_dim())?,
                    output: t.output.clone(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(MultiTaskKernelConfig { tasks })
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::InvalidArgument("network needs at least one layer".into()));
        }
        let last = self.layers.len();
        for (idx, layer) in self.layers.iter().enumerate() {
            let l = idx + 1;
            if idx > 0 && layer.in_dim() != self.layers[idx - 1].out_dim() {
                return Err(Error::Dimension(format!(
                    "layer {l} expects input of size {}, previous layer produces {}",
                    layer.in_dim(),
                    self.layers[idx - 1].out_dim()
                )));
            }
            if layer.bias.len() != layer.out_dim() {
                return Err(Error::Dimension(format!(
                    "layer {l} bias has length {}, weight has {} rows",
                    layer.bias.len(),
                    layer.out_dim()
                )));
            }
            if layer.bias.iter().any(|b| !b.is_finite()) {
                return Err(Error::NonFinite(format!("layer {l} bias")));
            }
            match (&layer.activation, l == last) {
                (Some(_), true) => {
                    return Err(Error::InvalidArgument(format!(
                        "layer {l} is the last layer and must not carry an activation"
                    )))
                }
                (None, false) => {
                    return Err(Error::InvalidArgument(format!(
                        "hidden layer {l} needs an activation"
                    )))
                }
                (Some(a), false) => a.validate()?,
                (None, true) => {}
            }
            if let Some(o) = layer.activation_norm_override {
                if !(o > 0.0 && o.is_finite()) {
                    return Err(Error::InvalidArgument(format!(
                        "layer {l} activation_norm_override must be positive"
                    )));
                }
            }
        }
        let widths = self.widths();
        if self.sobolev_orders.len() != widths.len() {
            return Err(Error::Dimension(format!(
                "need {} Sobolev orders (s_0..s_L), got {}",
                widths.len(),
                self.sobolev_orders.len()
            )));
        }
        for (l, (&s, &d)) in self.sobolev_orders.iter().zip(&widths).enumerate() {
            if !(s > d as f64 / 2.0) {
                return Err(Error::SobolevOrder { layer: l, s, d });
            }
        }
        self.final_map.validate()?;
        if self.final_map.input_dim != widths[last] {
            return Err(Error::Dimension(format!(
                "final map input_dim {} differs from d_L = {}",
                self.final_map.input_dim, widths[last]
            )));
        }
        if self.final_map.sobolev_order != self.sobolev_orders[last] {
            return Err(Error::Dimension(format!(
                "final map sobolev_order {} differs from s_L = {}",
                self.final_map.sobolev_order, self.sobolev_orders[last]
            )));
        }
        if self.final_map.terms.len() != self.tasks || self.tasks == 0 {
            return Err(Error::Dimension(format!(
                "T = {} but final map has {} terms",
                self.tasks,
                self.final_map.terms.len()
            )));
        }
        if self.final_map.output_dim() != self.m {
            return Err(Error::Dimension(format!(
                "m = {} but final map outputs dimension {}",
                self.m,
                self.final_map.output_dim()
            )));
        }
        Ok(())
    }

    /// `b_L(W_L(σ_{L−1}(…σ_1(b_1(W_1 x))…)))`, the input to `g`.
    pub fn hidden_output(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut h = x.to_vec();
        for (idx, layer) in self.layers.iter().enumerate() {
            if h.len() != layer.in_dim() {
                return Err(Error::Dimension(format!(
                    "layer {} expects input of size {}, got {}",
                    idx + 1,
                    layer.in_dim(),
                    h.len()
                )));
            }
            let mut z = layer.weight.matvec(&h)?;
            for (zi, bi) in z.iter_mut().zip(&layer.bias) {
                *zi += bi;
            }
            if let Some(act) = &layer.activation {
                for zi in z.iter_mut() {
                    *zi = act.apply(*zi);
                }
            }
            h = z;
        }
        Ok(h)
    }
}

pub fn forward(net: &NetworkSpec, x: &[f64]) -> Result<Vec<f64>> {
    let h = net.hidden_output(x)?;
    final_map_eval(&net.final_map, &h)
}

/// `g(x) = Σ_t e^{−r_t‖x‖²} M_t c_t`.
pub fn final_map_eval(spec: &FinalMapSpec, x: &[f64]) -> Result<Vec<f64>> {
    if x.len() != spec.input_dim {
        return Err(Error::Dimension(format!(
            "final map on R^{} evaluated at a point of length {}",
            spec.input_dim,
            x.len()
        )));
    }
    let sq: f64 = x.iter().map(|v| v * v).sum();
    let mut out = vec![0.0; spec.output_dim()];
    for term in &spec.terms {
        let weight = (-(term.rate as f64) * sq).exp();
        let v = term.output.matrix().matvec(&term.coeffs)?;
        for (o, vi) in out.iter_mut().zip(v) {
            *o += weight * vi;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WeightRecipe {
    Orthogonal,
    ScaledOrthogonal { gamma: f64 },
    /// Singular values log-spaced with `σ_max / σ_min = kappa` and unit product.
    Conditioned { kappa: f64 },
}

fn default_activation() -> ActivationSpec {
    ActivationSpec::SmoothedLeakyRelu {
        alpha: 0.5,
        beta: 1.0,
    }
}

fn default_smoothness() -> f64 {
    1.5
}

fn default_rate() -> u32 {
    1
}

/// Synthetic network recipe.
///
/// Sobolev orders are `s_l = d_l/2 + smoothness`, so nondecreasing widths give
/// nondecreasing orders. Final-map output matrices are `I_m`; coefficients are
/// Gaussian scaled by `1/√m`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub widths: Vec<usize>,
    #[serde(rename = "T")]
    pub tasks: usize,
    pub m: usize,
    pub recipe: WeightRecipe,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_activation")]
    pub activation: ActivationSpec,
    #[serde(default = "default_smoothness")]
    pub smoothness: f64,
    #[serde(default)]
    pub bias_scale: f64,
    #[serde(default = "default_rate")]
    pub rate: u32,
}

impl GeneratorConfig {
    pub fn new(widths: Vec<usize>, tasks: usize, m: usize, recipe: WeightRecipe, seed: u64) -> Self {
        Self {
            widths,
            tasks,
            m,
            recipe,
            seed,
            activation: default_activation(),
            smoothness: default_smoothness(),
            bias_scale: 0.0,
            rate: 1,
        }
    }
}

fn gaussian_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    let data = (0..rows * cols).map(|_| rng.sample(StandardNormal)).collect();
    Matrix::new(rows, cols, data).expect("finite gaussian entries")
}

/// `rows x cols` matrix with orthonormal columns (rows >= cols).
fn random_isometry(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    let g = gaussian_matrix(rng, rows, cols).to_nalgebra();
    let qr = g.qr();
    let q = qr.q();
    let r = qr.r();
    // fix column signs so the distribution is Haar
    let mut out = Matrix::from_nalgebra(&q.columns(0, cols).into_owned());
    for j in 0..cols {
        if r[(j, j)] < 0.0 {
            for i in 0..rows {
                out.set(i, j, -out.get(i, j));
            }
        }
    }
    out
}

fn recipe_weight(rng: &mut ChaCha8Rng, rows: usize, cols: usize, recipe: WeightRecipe) -> Result<Matrix> {
    match recipe {
        WeightRecipe::Orthogonal => Ok(random_isometry(rng, rows, cols)),
        WeightRecipe::ScaledOrthogonal { gamma } => Ok(random_isometry(rng, rows, cols).scaled(gamma)),
        WeightRecipe::Conditioned { kappa } => {
            let k = cols;
            if k < 2 && kappa != 1.0 {
                return Err(Error::InvalidArgument(format!(
                    "conditioned recipe with kappa = {kappa} needs layers with at least 2 columns"
                )));
            }
            let u = random_isometry(rng, rows, k);
            let v = random_isometry(rng, cols, k);
            let log_k = kappa.ln();
            let values: Vec<f64> = (0..k)
                .map(|i| {
                    let t = if k == 1 { 0.5 } else { i as f64 / (k - 1) as f64 };
                    (log_k * (0.5 - t)).exp()
                })
                .collect();
            let svd_like = crate::matana::SvdResult {
                singular_values: values.clone(),
                left_vectors: u,
                right_vectors: v,
            };
            Ok(svd_like.recompose_with(&values))
        }
    }
}

pub fn generate_network(cfg: &GeneratorConfig) -> Result<NetworkSpec> {
    if cfg.widths.len() < 2 || cfg.widths.contains(&0) {
        return Err(Error::InvalidArgument(
            "generator needs at least two positive widths (d_0, d_1)".into(),
        ));
    }
    if cfg.tasks == 0 || cfg.m == 0 || cfg.rate == 0 {
        return Err(Error::InvalidArgument("T, m and rate must be positive".into()));
    }
    match cfg.recipe {
        WeightRecipe::ScaledOrthogonal { gamma } if !(gamma > 0.0 && gamma.is_finite()) => {
            return Err(Error::InvalidArgument(format!("gamma must be positive, got {gamma}")));
        }
        WeightRecipe::Conditioned { kappa } if !(kappa >= 1.0 && kappa.is_finite()) => {
            return Err(Error::InvalidArgument(format!("kappa must be >= 1, got {kappa}")));
        }
        _ => {}
    }
    for pair in cfg.widths.windows(2) {
        if pair[1] < pair[0] {
            return Err(Error::InvalidArgument(format!(
                "widths must be nondecreasing for injective layers, got {:?}",
                cfg.widths
            )));
        }
    }
    cfg.activation.validate()?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let depth = cfg.widths.len() - 1;
    let mut layers = Vec::with_capacity(depth);
    for l in 0..depth {
        let (cols, rows) = (cfg.widths[l], cfg.widths[l + 1]);
        let weight = recipe_weight(&mut rng, rows, cols, cfg.recipe)?;
        let bias = (0..rows)
            .map(|_| cfg.bias_scale * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let activation = (l + 1 < depth).then_some(cfg.activation);
        layers.push(LayerSpec::new(weight, bias, activation));
    }
    let sobolev_orders: Vec<f64> = cfg
        .widths
        .iter()
        .map(|&d| d as f64 / 2.0 + cfg.smoothness)
        .collect();
    let scale = 1.0 / (cfg.m as f64).sqrt();
    let terms = (0..cfg.tasks)
        .map(|_| FinalMapTerm {
            rate: cfg.rate,
            output: OutputMatrix::identity(cfg.m),
            coeffs: (0..cfg.m)
                .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
                .collect(),
        })
        .collect();
    let d_last = cfg.widths[depth];
    let net = NetworkSpec {
        layers,
        final_map: FinalMapSpec {
            terms,
            input_dim: d_last,
            sobolev_order: sobolev_orders[depth],
        },
        sobolev_orders,
        tasks: cfg.tasks,
        m: cfg.m,
    };
    net.validate()?;
    Ok(net)
}

/// `σ_max / σ_min` of any weight (thin SVD), used for reporting.
pub fn weight_condition(w: &Matrix) -> Result<f64> {
    Ok(crate::matana::condition_from_values(&svd(w)?.singular_values))
}
