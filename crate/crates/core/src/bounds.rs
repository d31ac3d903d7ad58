//! Koopman-based Rademacher complexity bounds and comparison baselines.
//!
//! Every variant produces a [`BoundReport`] whose `total` equals
//! `prefactor · ∏ contribution_l`, with one [`LayerFactor`] per layer.
//!
//! Variants:
//! - `theorem_inv`: square weights, `T√(κU₀/n)·‖g‖·∏_l ratio_sup_l / |det W_l|^{1/2} · ∏_{l<L} ‖K_σl‖`.
//! - `corollary`: the same with class-uniform caps `max(1, C^s)` and `√D` per layer.
//! - `theorem_inj`: tall weights, `G_l · max(1, σ_max)^{s_{l−1}} / det(W_lᵀW_l)^{1/4}` per layer.
//! - `remark_brownian`: single-output `∏‖W_l‖ · ∏ (1/inf σ′)^d · sup σ′`, unit constant.
//! - `hashimoto_alt`: single-output `∏ max(1,‖W_l‖²)^{1/2} / det(W_lᵀW_l)^{1/4} · ∏ (1/inf σ′)^d · max(1, sup σ′)`.
//! - `spectral_proxy`, `frobenius_proxy`: `∏‖W_l‖/√n` and `∏‖W_l‖_F/√n`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{g_norm, u0, MultiTaskKernelConfig};
use crate::matana::{
    class_membership, gram_det_quarter, svd, Matrix, WeightClassKind, WeightClassSpec,
};
use crate::network::{activation_derivative_bounds, koopman_activation_norm_bound, weight_condition, NetworkSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundVariant {
    TheoremInv,
    Corollary,
    TheoremInj,
    RemarkBrownian,
    HashimotoAlt,
    SpectralProxy,
    FrobeniusProxy,
}

impl BoundVariant {
    pub const ALL: [BoundVariant; 7] = [
        Self::TheoremInv,
        Self::Corollary,
        Self::TheoremInj,
        Self::RemarkBrownian,
        Self::HashimotoAlt,
        Self::SpectralProxy,
        Self::FrobeniusProxy,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::TheoremInv => "theorem_inv",
            Self::Corollary => "corollary",
            Self::TheoremInj => "theorem_inj",
            Self::RemarkBrownian => "remark_brownian",
            Self::HashimotoAlt => "hashimoto_alt",
            Self::SpectralProxy => "spectral_proxy",
            Self::FrobeniusProxy => "frobenius_proxy",
        }
    }
}

impl std::fmt::Display for BoundVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Per-layer pieces of a bound.
///
/// `contribution = restriction_factor · ratio_sup / det_factor · activation_norm_bound`.
/// `ratio_sup` is the numerator weight factor of the variant (the Fourier ratio
/// supremum for Koopman variants, a norm for the others); `activation_norm_bound`
/// is 1 for the last layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerFactor {
    pub layer: usize,
    pub ratio_sup: f64,
    pub det_factor: f64,
    pub activation_norm_bound: f64,
    pub restriction_factor: f64,
    pub operator_norm: f64,
    pub condition_number: f64,
    pub contribution: f64,
}

impl LayerFactor {
    fn assemble(
        layer: usize,
        w: &Matrix,
        ratio_sup: f64,
        det_factor: f64,
        activation_norm_bound: f64,
        restriction_factor: f64,
    ) -> Result<Self> {
        let s = svd(w)?;
        let contribution = restriction_factor * ratio_sup / det_factor * activation_norm_bound;
        Ok(Self {
            layer,
            ratio_sup,
            det_factor,
            activation_norm_bound,
            restriction_factor,
            operator_norm: s.sigma_max(),
            condition_number: weight_condition(w)?,
            contribution,
        })
    }
}

/// Inputs of the multi-task prefactor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrefactorParts {
    pub tasks: usize,
    pub kappa: f64,
    pub u0: f64,
    pub n: usize,
    pub g_norm: f64,
}

impl PrefactorParts {
    /// `T √(κ U₀ / n) ‖g‖`.
    pub fn statement(&self) -> f64 {
        self.tasks as f64 * (self.kappa * self.u0 / self.n as f64).sqrt() * self.g_norm
    }

    /// `T U₀ √(κ / n) ‖g‖`.
    pub fn proof_line(&self) -> f64 {
        self.tasks as f64 * self.u0 * (self.kappa / self.n as f64).sqrt() * self.g_norm
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub variant: BoundVariant,
    pub prefactor: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prefactor_parts: Option<PrefactorParts>,
    pub layers: Vec<LayerFactor>,
    pub total: f64,
    /// Total under the `T U₀ √(κ/n)` prefactor reading, where applicable.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alternate_prefactor_total: Option<f64>,
    pub notes: Vec<String>,
}

impl BoundReport {
    fn new(
        variant: BoundVariant,
        prefactor: f64,
        prefactor_parts: Option<PrefactorParts>,
        layers: Vec<LayerFactor>,
        notes: Vec<String>,
    ) -> Self {
        let product = Self::layer_product(&layers);
        let alternate_prefactor_total = prefactor_parts.map(|p| p.proof_line() * product);
        Self {
            variant,
            prefactor,
            prefactor_parts,
            total: prefactor * product,
            layers,
            alternate_prefactor_total,
            notes,
        }
    }

    fn layer_product(layers: &[LayerFactor]) -> f64 {
        layers.iter().map(|l| l.contribution).product()
    }

    /// `prefactor · ∏ contribution_l`, recomputed from the stored parts.
    pub fn recomposed_total(&self) -> f64 {
        let product: f64 = self
            .layers
            .iter()
            .map(|l| l.restriction_factor * l.ratio_sup / l.det_factor * l.activation_norm_bound)
            .product();
        self.prefactor * product
    }
}

/// `sup_ρ≥0 ((1 + σ²ρ²)^{s_in} / (1 + ρ²)^{s_out})^{1/2}` for `σ = σ_max`.
pub fn ratio_sup_from_sigma(sigma_max: f64, s_in: f64, s_out: f64) -> Result<f64> {
    if s_in > s_out {
        return Err(Error::UnboundedRatio { s_in, s_out });
    }
    if s_in == s_out {
        return Ok(sigma_max.max(1.0).powf(s_in));
    }
    let sigma_sq = sigma_max * sigma_max;
    if sigma_sq == 0.0 {
        return Ok(1.0);
    }
    let u_star = (s_in * sigma_sq - s_out) / (sigma_sq * (s_out - s_in));
    if u_star > 0.0 {
        let log_h = s_in * (sigma_sq * u_star).ln_1p() - s_out * u_star.ln_1p();
        Ok((0.5 * log_h).exp().max(1.0))
    } else {
        Ok(1.0)
    }
}

/// `sup_ω ((1 + ‖Wᵀω‖²)^{s_in} / (1 + ‖ω‖²)^{s_out})^{1/2}`.
///
/// The supremum over directions is attained along the top left-singular
/// vector, leaving a one-dimensional problem in `ρ = ‖ω‖`.
pub fn ratio_sup(w: &Matrix, s_in: f64, s_out: f64) -> Result<f64> {
    if s_in > s_out {
        return Err(Error::UnboundedRatio { s_in, s_out });
    }
    ratio_sup_from_sigma(svd(w)?.sigma_max(), s_in, s_out)
}

/// `sup_{ω ∈ range(W)} ((1 + ‖Wᵀω‖²)/(1 + ‖ω‖²))^{s_in/2} = max(1, σ_max)^{s_in}`.
///
/// Uses the single order `s_in` as in the injective-weights bound; `s_out`
/// only enters through the `s_in <= s_out` precondition.
pub fn ratio_sup_restricted(w: &Matrix, s_in: f64, s_out: f64) -> Result<f64> {
    if w.rows() < w.cols() {
        return Err(Error::WideMatrix {
            rows: w.rows(),
            cols: w.cols(),
        });
    }
    if s_in > s_out {
        return Err(Error::UnboundedRatio { s_in, s_out });
    }
    Ok(svd(w)?.sigma_max().max(1.0).powf(s_in))
}

fn prefactor_parts(net: &NetworkSpec, kernel: &MultiTaskKernelConfig, n: usize, notes: &mut Vec<String>) -> Result<PrefactorParts> {
    net.validate()?;
    kernel.validate()?;
    if n == 0 {
        return Err(Error::InvalidArgument("sample count n must be positive".into()));
    }
    if kernel.num_tasks() != net.tasks || kernel.output_dim() != net.m || kernel.input_dim() != net.input_dim() {
        return Err(Error::Dimension(format!(
            "kernel (T, m, d_0) = ({}, {}, {}) does not match network ({}, {}, {})",
            kernel.num_tasks(),
            kernel.output_dim(),
            kernel.input_dim(),
            net.tasks,
            net.m,
            net.input_dim()
        )));
    }
    if kernel
        .tasks
        .iter()
        .any(|t| t.kernel.sobolev_order != net.sobolev_orders[0])
    {
        notes.push("kernel: scalar kernel order differs from s_0; kappa only depends on the kernel diagonal".into());
    }
    let kappa = kernel.kappa();
    notes.push(if kernel.tasks.iter().any(|t| t.kernel.kappa_override.is_some()) {
        format!("kappa = {kappa}: user override")
    } else {
        format!("kappa = {kappa}: tight diagonal value Phi(0) of the Matern kernel")
    });
    notes.push("g_norm: separable native-space rule ||phi v||^2 = ||phi||^2_{H^s} v^T M^-1 v, Fourier convention f^(w) = int f(x) e^{-i<x,w>} dx".into());
    Ok(PrefactorParts {
        tasks: net.tasks,
        kappa,
        u0: u0(kernel)?,
        n,
        g_norm: g_norm(&net.final_map)?,
    })
}

fn activation_factor(net: &NetworkSpec, idx: usize, notes: &mut Vec<String>) -> Result<f64> {
    let layer = &net.layers[idx];
    let Some(act) = &layer.activation else {
        return Ok(1.0);
    };
    if let Some(o) = layer.activation_norm_override {
        notes.push(format!("layer {}: activation Koopman norm {o} supplied by user", idx + 1));
        return Ok(o);
    }
    let d = layer.out_dim();
    let bound = koopman_activation_norm_bound(act, d)?;
    notes.push(format!(
        "layer {}: activation Koopman norm bounded by (1/inf sigma')^{d} sup sigma' = {bound} (first-order, elementwise)",
        idx + 1
    ));
    Ok(bound)
}

fn check_class(net: &NetworkSpec, class: &WeightClassSpec) -> Result<()> {
    let mut offending = Vec::new();
    let mut detail = Vec::new();
    for (idx, layer) in net.layers.iter().enumerate() {
        let m = class_membership(&layer.weight, class)?;
        if !m.member {
            offending.push(idx + 1);
            detail.push(format!(
                "layer {}: ||W|| = {}, det term = {}, violations {:?}",
                idx + 1,
                m.operator_norm,
                m.det_term,
                m.violations
            ));
        }
    }
    if offending.is_empty() {
        Ok(())
    } else {
        Err(Error::ClassViolation {
            layers: offending,
            detail: detail.join("; "),
        })
    }
}

pub fn theorem_inv_bound(
    net: &NetworkSpec,
    class: &WeightClassSpec,
    kernel: &MultiTaskKernelConfig,
    n: usize,
) -> Result<BoundReport> {
    let mut notes = Vec::new();
    let parts = prefactor_parts(net, kernel, n, &mut notes)?;
    for layer in &net.layers {
        if !layer.weight.is_square() {
            return Err(Error::NotSquare {
                rows: layer.weight.rows(),
                cols: layer.weight.cols(),
            });
        }
    }
    check_class(net, class)?;
    let orders = &net.sobolev_orders;
    let mut layers = Vec::with_capacity(net.depth());
    for (idx, layer) in net.layers.iter().enumerate() {
        let w = &layer.weight;
        let ratio = ratio_sup(w, orders[idx], orders[idx + 1])?;
        let det: f64 = svd(w)?.singular_values.iter().product();
        let act = activation_factor(net, idx, &mut notes)?;
        layers.push(LayerFactor::assemble(idx + 1, w, ratio, det.sqrt(), act, 1.0)?);
    }
    notes.push("biases: shift Koopman operators have unit norm and do not enter".into());
    notes.push("alternate_prefactor_total uses T*U0*sqrt(kappa/n) in place of T*sqrt(kappa*U0/n)".into());
    Ok(BoundReport::new(
        BoundVariant::TheoremInv,
        parts.statement(),
        Some(parts),
        layers,
        notes,
    ))
}

/// Class-uniform bound for equal widths `d` and equal orders `s`.
///
/// Each layer contributes `max(1, C^s) / √D` times its activation factor.
pub fn corollary_bound(
    net: &NetworkSpec,
    class: &WeightClassSpec,
    kernel: &MultiTaskKernelConfig,
    n: usize,
) -> Result<BoundReport> {
    let mut notes = Vec::new();
    let parts = prefactor_parts(net, kernel, n, &mut notes)?;
    class.validate()?;
    let widths = net.widths();
    if widths.iter().any(|&w| w != widths[0]) {
        return Err(Error::InvalidArgument(format!(
            "corollary bound needs uniform widths, got {widths:?}"
        )));
    }
    let s = net.sobolev_orders[0];
    if net.sobolev_orders.iter().any(|&o| o != s) {
        return Err(Error::InvalidArgument(format!(
            "corollary bound needs uniform Sobolev orders, got {:?}",
            net.sobolev_orders
        )));
    }
    class.check_feasible(widths[0])?;
    let cap = class.c.powf(s).max(1.0);
    let det = class.d.sqrt();
    let mut layers = Vec::with_capacity(net.depth());
    for (idx, layer) in net.layers.iter().enumerate() {
        let act = activation_factor(net, idx, &mut notes)?;
        layers.push(LayerFactor::assemble(idx + 1, &layer.weight, cap, det, act, 1.0)?);
    }
    let act_product: f64 = layers.iter().map(|l| l.activation_norm_bound).product();
    notes.push(format!(
        "class caps per layer: max(1, C^s) = {cap}, sqrt(D) = {det}; single-factor form max(1,C^s) T sqrt(kappa U0/(nD)) ||g|| prod ||K_sigma|| = {}",
        cap / det * parts.statement() * act_product
    ));
    Ok(BoundReport::new(
        BoundVariant::Corollary,
        parts.statement(),
        Some(parts),
        layers,
        notes,
    ))
}

pub fn theorem_inj_bound(
    net: &NetworkSpec,
    class: &WeightClassSpec,
    kernel: &MultiTaskKernelConfig,
    n: usize,
    g_overrides: Option<&[f64]>,
) -> Result<BoundReport> {
    let mut notes = Vec::new();
    let parts = prefactor_parts(net, kernel, n, &mut notes)?;
    for (idx, layer) in net.layers.iter().enumerate() {
        if layer.weight.rows() < layer.weight.cols() {
            return Err(Error::Dimension(format!(
                "layer {} is wide ({}x{}); injective layers need d_l >= d_(l-1)",
                idx + 1,
                layer.weight.rows(),
                layer.weight.cols()
            )));
        }
    }
    if let Some(g) = g_overrides {
        if g.len() != net.depth() || g.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::InvalidArgument(format!(
                "need {} positive restriction factors G_l, got {g:?}",
                net.depth()
            )));
        }
    }
    let injective = WeightClassSpec {
        kind: WeightClassKind::Injective,
        ..*class
    };
    check_class(net, &injective)?;

    let orders = &net.sobolev_orders;
    let mut layers = Vec::with_capacity(net.depth());
    for (idx, layer) in net.layers.iter().enumerate() {
        let w = &layer.weight;
        let ratio = ratio_sup_restricted(w, orders[idx], orders[idx + 1])?;
        let gdq = gram_det_quarter(w)?;
        if gdq.rank_deficient {
            return Err(Error::RankDeficient { layer: idx + 1 });
        }
        let g_l = match g_overrides {
            Some(g) => {
                notes.push(format!("layer {}: G_l = {} supplied by user", idx + 1, g[idx]));
                g[idx]
            }
            None => {
                notes.push(format!("layer {}: G_l = 1 assumed (restriction norm ratio not computed)", idx + 1));
                1.0
            }
        };
        let act = activation_factor(net, idx, &mut notes)?;
        layers.push(LayerFactor::assemble(idx + 1, w, ratio, gdq.value, act, g_l)?);
    }
    notes.push("ratio factor uses the single order s_(l-1) over range(W_l): max(1, sigma_max)^s_(l-1)".into());
    Ok(BoundReport::new(
        BoundVariant::TheoremInj,
        parts.statement(),
        Some(parts),
        layers,
        notes,
    ))
}

fn single_output_activation_terms(net: &NetworkSpec, idx: usize, clamp_sup: bool) -> Result<f64> {
    let layer = &net.layers[idx];
    let Some(act) = &layer.activation else {
        return Ok(1.0);
    };
    let b = activation_derivative_bounds(act)?;
    if b.inf_deriv <= 0.0 {
        return Err(Error::NotBiLipschitz(act.name().into()));
    }
    let sup = if clamp_sup { b.sup_deriv.max(1.0) } else { b.sup_deriv };
    Ok(b.inf_deriv.recip().powi(layer.out_dim() as i32) * sup)
}

fn require_single_output(net: &NetworkSpec) -> Result<()> {
    net.validate()?;
    if net.m != 1 || net.tasks != 1 {
        return Err(Error::SingleOutputOnly {
            m: net.m,
            tasks: net.tasks,
        });
    }
    Ok(())
}

/// Operator-norm bound for single-output networks, big-O constant set to 1.
pub fn remark_brownian_bound(net: &NetworkSpec) -> Result<BoundReport> {
    require_single_output(net)?;
    let mut layers = Vec::with_capacity(net.depth());
    for (idx, layer) in net.layers.iter().enumerate() {
        let w = &layer.weight;
        let norm = svd(w)?.sigma_max();
        let act = single_output_activation_terms(net, idx, false)?;
        layers.push(LayerFactor::assemble(idx + 1, w, norm, 1.0, act, 1.0)?);
    }
    Ok(BoundReport::new(
        BoundVariant::RemarkBrownian,
        1.0,
        None,
        layers,
        vec!["big-O constant set to 1; compare orderings and ratios only".into()],
    ))
}

/// Determinant-based alternative for single-output networks, big-O constant set to 1.
pub fn hashimoto_alt_bound(net: &NetworkSpec) -> Result<BoundReport> {
    require_single_output(net)?;
    let mut layers = Vec::with_capacity(net.depth());
    for (idx, layer) in net.layers.iter().enumerate() {
        let w = &layer.weight;
        if w.rows() < w.cols() {
            return Err(Error::WideMatrix {
                rows: w.rows(),
                cols: w.cols(),
            });
        }
        let norm = svd(w)?.sigma_max();
        let gdq = gram_det_quarter(w)?;
        if gdq.rank_deficient {
            return Err(Error::RankDeficient { layer: idx + 1 });
        }
        let act = single_output_activation_terms(net, idx, true)?;
        layers.push(LayerFactor::assemble(idx + 1, w, norm.max(1.0), gdq.value, act, 1.0)?);
    }
    Ok(BoundReport::new(
        BoundVariant::HashimotoAlt,
        1.0,
        None,
        layers,
        vec!["big-O constant set to 1; compare orderings and ratios only".into()],
    ))
}

/// Spectral and Frobenius norm-product proxies divided by `√n`.
pub fn baseline_bounds(net: &NetworkSpec, n: usize) -> Result<Vec<BoundReport>> {
    if n == 0 {
        return Err(Error::InvalidArgument("sample count n must be positive".into()));
    }
    let prefactor = 1.0 / (n as f64).sqrt();
    let mut spectral = Vec::with_capacity(net.depth());
    let mut frobenius = Vec::with_capacity(net.depth());
    for (idx, layer) in net.layers.iter().enumerate() {
        let w = &layer.weight;
        spectral.push(LayerFactor::assemble(idx + 1, w, svd(w)?.sigma_max(), 1.0, 1.0, 1.0)?);
        frobenius.push(LayerFactor::assemble(idx + 1, w, w.frobenius_norm(), 1.0, 1.0, 1.0)?);
    }
    let note = "proxy: norm product over sqrt(n), not the constants of any published bound".to_string();
    Ok(vec![
        BoundReport::new(BoundVariant::SpectralProxy, prefactor, None, spectral, vec![note.clone()]),
        BoundReport::new(BoundVariant::FrobeniusProxy, prefactor, None, frobenius, vec![note]),
    ])
}

/// Dispatches to the bound function for `variant`; `g_overrides` only
/// affects `theorem_inj`.
pub fn compute_variant(
    variant: BoundVariant,
    net: &NetworkSpec,
    class: &WeightClassSpec,
    kernel: &MultiTaskKernelConfig,
    n: usize,
    g_overrides: Option<&[f64]>,
) -> Result<BoundReport> {
    match variant {
        BoundVariant::TheoremInv => theorem_inv_bound(net, class, kernel, n),
        BoundVariant::Corollary => corollary_bound(net, class, kernel, n),
        BoundVariant::TheoremInj => theorem_inj_bound(net, class, kernel, n, g_overrides),
        BoundVariant::RemarkBrownian => remark_brownian_bound(net),
        BoundVariant::HashimotoAlt => hashimoto_alt_bound(net),
        BoundVariant::SpectralProxy => Ok(baseline_bounds(net, n)?.swap_remove(0)),
        BoundVariant::FrobeniusProxy => Ok(baseline_bounds(net, n)?.swap_remove(1)),
    }
}

/// Smallest total among the supplied reports (the "combined" bound).
pub fn combined_minimum(reports: &[BoundReport]) -> Option<(BoundVariant, f64)> {
    reports
        .iter()
        .filter(|r| r.total.is_finite())
        .map(|r| (r.variant, r.total))
        .min_by(|a, b| a.1.total_cmp(&b.1))
}
