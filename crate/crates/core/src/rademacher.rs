//! Monte-Carlo lower-bound estimation of the empirical vector-valued
//! Rademacher complexity `E_σ sup_f (1/n)|Σ_i ⟨σ_i, f(x_i)⟩|`.
//!
//! The supremum is approached from inside the class by projected gradient
//! ascent, so every recorded objective belongs to a feasible network.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matana::{class_membership, project_to_class, Matrix, WeightClassSpec};
use crate::network::NetworkSpec;

/// Largest `n·m` accepted by [`brute_force_oracle`].
pub const MAX_ENUMERATION: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum GradientMode {
    #[default]
    Analytic,
    CentralDifference,
}

fn default_num_sigma() -> usize {
    64
}
fn default_restarts() -> usize {
    8
}
fn default_steps() -> usize {
    300
}
fn default_step_size() -> f64 {
    0.05
}
fn default_step_decay() -> f64 {
    0.99
}
fn default_init_scale() -> f64 {
    0.5
}
fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RademacherConfig {
    #[serde(default = "default_num_sigma")]
    pub num_sigma: usize,
    #[serde(default = "default_restarts")]
    pub restarts: usize,
    #[serde(default = "default_steps")]
    pub steps: usize,
    #[serde(default = "default_step_size")]
    pub step_size: f64,
    #[serde(default = "default_step_decay")]
    pub step_decay: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub gradient: GradientMode,
    /// Run (σ-sample, restart) tasks on the rayon pool.
    #[serde(default)]
    pub parallel: bool,
    #[serde(default = "default_true")]
    pub optimize_biases: bool,
    /// Also optimize the final-map coefficients `c_t`, each kept inside
    /// `{c : cᵀ M_t c <= c_tᵀ M_t c_t}` of its template value.
    #[serde(default)]
    pub optimize_coeffs: bool,
    /// Standard deviation of the Gaussian perturbation for restarts after the first.
    #[serde(default = "default_init_scale")]
    pub init_scale: f64,
}

impl Default for RademacherConfig {
    fn default() -> Self {
        Self {
            num_sigma: default_num_sigma(),
            restarts: default_restarts(),
            steps: default_steps(),
            step_size: default_step_size(),
            step_decay: default_step_decay(),
            seed: 0,
            gradient: GradientMode::Analytic,
            parallel: false,
            optimize_biases: true,
            optimize_coeffs: false,
            init_scale: default_init_scale(),
        }
    }
}

impl RademacherConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_sigma == 0 || self.restarts == 0 {
            return Err(Error::InvalidArgument("num_sigma and restarts must be positive".into()));
        }
        if !(self.step_size.is_finite() && self.step_size >= 0.0) {
            return Err(Error::InvalidArgument(format!("step_size must be finite and >= 0, got {}", self.step_size)));
        }
        if !(self.step_decay > 0.0 && self.step_decay <= 1.0) {
            return Err(Error::InvalidArgument(format!("step_decay must lie in (0, 1], got {}", self.step_decay)));
        }
        if !(self.init_scale.is_finite() && self.init_scale >= 0.0) {
            return Err(Error::InvalidArgument(format!("init_scale must be finite and >= 0, got {}", self.init_scale)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct OptimizerDiagnostics {
    /// Gradient steps taken over all tasks and both signs.
    pub iterations: usize,
    /// Projections that moved an iterate (grid mode: snaps to a different point).
    pub projections: usize,
    pub discarded_restarts: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub discard_reasons: Vec<String>,
    pub coeffs_optimized: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RademacherEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub num_sigma_samples: usize,
    pub restarts_per_sample: usize,
    pub best_objective_per_sample: Vec<f64>,
    /// Best objective of each (σ-sample, restart) task; `None` when discarded.
    pub restart_objectives: Vec<Vec<Option<f64>>>,
    pub diagnostics: OptimizerDiagnostics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleResult {
    pub exact_value: f64,
    pub class_size: usize,
    pub sigma_space_size: usize,
}

/// Optimization variables of a network: weights, biases and optionally `c_t`.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub weights: Vec<Matrix>,
    pub biases: Vec<Vec<f64>>,
    pub coeffs: Option<Vec<Vec<f64>>>,
}

impl Params {
    pub fn from_network(net: &NetworkSpec, include_coeffs: bool) -> Self {
        Self {
            weights: net.layers.iter().map(|l| l.weight.clone()).collect(),
            biases: net.layers.iter().map(|l| l.bias.clone()).collect(),
            coeffs: include_coeffs.then(|| net.final_map.terms.iter().map(|t| t.coeffs.clone()).collect()),
        }
    }

    /// Template with these parameters substituted.
    pub fn apply_to(&self, template: &NetworkSpec) -> NetworkSpec {
        let mut net = template.clone();
        for (layer, (w, b)) in net.layers.iter_mut().zip(self.weights.iter().zip(&self.biases)) {
            layer.weight = w.clone();
            layer.bias = b.clone();
        }
        if let Some(coeffs) = &self.coeffs {
            for (term, c) in net.final_map.terms.iter_mut().zip(coeffs) {
                term.coeffs = c.clone();
            }
        }
        net
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend_from_slice(w.data());
            out.extend_from_slice(b);
        }
        if let Some(coeffs) = &self.coeffs {
            for c in coeffs {
                out.extend_from_slice(c);
            }
        }
        out
    }

    /// Same shapes as `self`, filled from `flat`.
    pub fn unflatten_like(&self, flat: &[f64]) -> Self {
        let mut it = flat.iter().copied();
        let mut take = |k: usize| -> Vec<f64> { it.by_ref().take(k).collect() };
        let mut weights = Vec::with_capacity(self.weights.len());
        let mut biases = Vec::with_capacity(self.biases.len());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            weights.push(Matrix::new(w.rows(), w.cols(), take(w.rows() * w.cols())).expect("shape"));
            biases.push(take(b.len()));
        }
        let coeffs = self.coeffs.as_ref().map(|cs| cs.iter().map(|c| take(c.len())).collect());
        Self { weights, biases, coeffs }
    }

    fn zeros_like(&self) -> Self {
        self.unflatten_like(&vec![0.0; self.flatten().len()])
    }
}

/// `(1/n)|Σ_i Σ_j σ_ij f_j(x_i)|` for an `n x m` value array and sign array.
pub fn fixed_function_rademacher(values: &Matrix, sigma: &Matrix) -> Result<f64> {
    Ok(correlation(values, sigma)?.abs())
}

fn correlation(values: &Matrix, sigma: &Matrix) -> Result<f64> {
    if values.rows() != sigma.rows() || values.cols() != sigma.cols() {
        return Err(Error::Dimension(format!(
            "values are {}x{} but signs are {}x{}",
            values.rows(),
            values.cols(),
            sigma.rows(),
            sigma.cols()
        )));
    }
    let sum: f64 = values.data().iter().zip(sigma.data()).map(|(f, s)| f * s).sum();
    Ok(sum / values.rows() as f64)
}

/// Network outputs on the data as an `n x m` array.
pub fn network_values(net: &NetworkSpec, data: &[Vec<f64>]) -> Result<Matrix> {
    let mut out = Vec::with_capacity(data.len() * net.m);
    for x in data {
        out.extend(crate::network::forward(net, x)?);
    }
    Matrix::new(data.len(), net.m, out)
}

/// Signed correlation `(1/n) Σ_i ⟨σ_i, f(x_i)⟩`; its absolute value is the
/// fixed-function Rademacher average.
pub fn objective(net: &NetworkSpec, sigma: &Matrix, data: &[Vec<f64>]) -> Result<f64> {
    correlation(&network_values(net, data)?, sigma)
}

/// Gradient of the signed correlation with respect to `theta`.
///
/// Bias gradients are always returned; coefficient gradients only when
/// `theta.coeffs` is present.
pub fn gradient_of_objective(
    template: &NetworkSpec,
    theta: &Params,
    sigma: &Matrix,
    data: &[Vec<f64>],
    mode: GradientMode,
) -> Result<Params> {
    check_sigma(sigma, data.len(), template.m)?;
    match mode {
        GradientMode::Analytic => analytic_gradient(&theta.apply_to(template), theta, sigma, data),
        GradientMode::CentralDifference => {
            let flat = theta.flatten();
            let mut grad = vec![0.0; flat.len()];
            let mut probe = flat.clone();
            for k in 0..flat.len() {
                let h = 1e-5 * (1.0 + flat[k].abs());
                probe[k] = flat[k] + h;
                let up = objective(&theta.unflatten_like(&probe).apply_to(template), sigma, data)?;
                probe[k] = flat[k] - h;
                let down = objective(&theta.unflatten_like(&probe).apply_to(template), sigma, data)?;
                probe[k] = flat[k];
                grad[k] = (up - down) / (2.0 * h);
            }
            Ok(theta.unflatten_like(&grad))
        }
    }
}

fn analytic_gradient(net: &NetworkSpec, theta: &Params, sigma: &Matrix, data: &[Vec<f64>]) -> Result<Params> {
    let mut grad = theta.zeros_like();
    let depth = net.depth();
    let term_vectors = net.final_map.term_vectors();
    let n = data.len() as f64;
    for (i, x) in data.iter().enumerate() {
        // forward with cached pre-activations
        let mut hs = vec![x.clone()];
        let mut zs = Vec::with_capacity(depth);
        for layer in &net.layers {
            let mut z = layer.weight.matvec(hs.last().expect("nonempty"))?;
            for (zi, bi) in z.iter_mut().zip(&layer.bias) {
                *zi += bi;
            }
            let h = match &layer.activation {
                Some(act) => z.iter().map(|&v| act.apply(v)).collect(),
                None => z.clone(),
            };
            zs.push(z);
            hs.push(h);
        }
        let s_i: Vec<f64> = (0..net.m).map(|j| sigma.get(i, j)).collect();
        let h_last = &hs[depth];
        let q: f64 = h_last.iter().map(|v| v * v).sum();

        let mut scale = 0.0;
        for (t, (term, v)) in net.final_map.terms.iter().zip(&term_vectors).enumerate() {
            let rate = term.rate as f64;
            let e = (-rate * q).exp();
            let a: f64 = s_i.iter().zip(v).map(|(s, vj)| s * vj).sum();
            scale += a * e * (-2.0 * rate);
            if let Some(gc) = grad.coeffs.as_mut() {
                let mt_s = term.output.matrix().matvec_t(&s_i)?;
                for (g, w) in gc[t].iter_mut().zip(mt_s) {
                    *g += e * w / n;
                }
            }
        }
        let mut dh: Vec<f64> = h_last.iter().map(|v| scale * v).collect();
        for l in (0..depth).rev() {
            let layer = &net.layers[l];
            let dz: Vec<f64> = match &layer.activation {
                Some(act) => dh.iter().zip(&zs[l]).map(|(d, &z)| d * act.derivative(z)).collect(),
                None => dh,
            };
            let h_prev = &hs[l];
            let gw = grad.weights[l].data_mut();
            let cols = h_prev.len();
            for (r, dzr) in dz.iter().enumerate() {
                for (c, hc) in h_prev.iter().enumerate() {
                    gw[r * cols + c] += dzr * hc / n;
                }
            }
            for (gb, dzr) in grad.biases[l].iter_mut().zip(&dz) {
                *gb += dzr / n;
            }
            dh = layer.weight.matvec_t(&dz)?;
        }
    }
    Ok(grad)
}

fn check_sigma(sigma: &Matrix, n: usize, m: usize) -> Result<()> {
    if sigma.rows() != n || sigma.cols() != m {
        return Err(Error::Dimension(format!(
            "sign array is {}x{}, expected {n}x{m}",
            sigma.rows(),
            sigma.cols()
        )));
    }
    Ok(())
}

fn check_data(template: &NetworkSpec, data: &[Vec<f64>]) -> Result<()> {
    template.validate()?;
    if data.is_empty() {
        return Err(Error::InvalidArgument("dataset is empty".into()));
    }
    let d0 = template.input_dim();
    if let Some(bad) = data.iter().position(|x| x.len() != d0) {
        return Err(Error::Dimension(format!(
            "data point {bad} has length {}, network input dimension is {d0}",
            data[bad].len()
        )));
    }
    Ok(())
}

/// i.i.d. uniform signs on `{±1}^{n x m}`.
pub fn draw_signs<R: Rng + ?Sized>(rng: &mut R, n: usize, m: usize) -> Matrix {
    let data = (0..n * m).map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 }).collect();
    Matrix::new(n, m, data).expect("shape")
}

fn sigma_rng(seed: u64, sample: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((sample as u64) << 32);
    rng
}

fn restart_rng(seed: u64, sample: usize, restart: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((sample as u64) << 32) | (restart as u64 + 1));
    rng
}

struct TaskOutcome {
    best: Option<f64>,
    iterations: usize,
    projections: usize,
    discard_reason: Option<String>,
}

/// Feasible-set handling shared by the continuous and grid estimators.
trait Feasible: Sync {
    /// Maps `theta` into the feasible set, returning whether it moved.
    fn project(&self, theta: &mut Params) -> Result<bool>;
}

struct ClassProjection<'a> {
    class: &'a WeightClassSpec,
    coeff_budget: Vec<f64>,
    template: &'a NetworkSpec,
}

impl Feasible for ClassProjection<'_> {
    fn project(&self, theta: &mut Params) -> Result<bool> {
        let mut moved = false;
        for w in theta.weights.iter_mut() {
            if !class_membership(w, self.class)?.member {
                *w = project_to_class(w, self.class)?;
                moved = true;
            }
        }
        if let Some(coeffs) = theta.coeffs.as_mut() {
            for ((c, term), budget) in coeffs.iter_mut().zip(&self.template.final_map.terms).zip(&self.coeff_budget) {
                let energy = term.output.quadratic_form(c)?;
                if energy > *budget {
                    let shrink = if *budget > 0.0 { (budget / energy).sqrt() } else { 0.0 };
                    c.iter_mut().for_each(|v| *v *= shrink);
                    moved = true;
                }
            }
        }
        Ok(moved)
    }
}

struct GridProjection {
    points: Vec<Params>,
    flats: Vec<Vec<f64>>,
}

impl GridProjection {
    fn nearest(&self, flat: &[f64]) -> usize {
        let dist = |p: &Vec<f64>| p.iter().zip(flat).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (k, p) in self.flats.iter().enumerate() {
            let d = dist(p);
            if d < best_d {
                best_d = d;
                best = k;
            }
        }
        best
    }
}

impl Feasible for GridProjection {
    fn project(&self, theta: &mut Params) -> Result<bool> {
        let flat = theta.flatten();
        let k = self.nearest(&flat);
        let moved = self.flats[k] != flat;
        *theta = self.points[k].clone();
        Ok(moved)
    }
}

/// Projected gradient ascent on `dir · correlation`, tracking the best `|correlation|`.
#[allow(clippy::too_many_arguments)]
fn ascend(
    template: &NetworkSpec,
    start: &Params,
    sigma: &Matrix,
    data: &[Vec<f64>],
    config: &RademacherConfig,
    feasible: &dyn Feasible,
    dir: f64,
    iterations: &mut usize,
    projections: &mut usize,
) -> std::result::Result<f64, String> {
    let eval = |p: &Params| -> std::result::Result<f64, String> {
        let v = objective(&p.apply_to(template), sigma, data).map_err(|e| e.to_string())?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err("non-finite objective".into())
        }
    };
    let mut theta = start.clone();
    let mut best = eval(&theta)?.abs();
    let mut eta = config.step_size;
    for _ in 0..config.steps {
        let grad = gradient_of_objective(template, &theta, sigma, data, config.gradient).map_err(|e| e.to_string())?;
        let mut g = grad.flatten();
        if !config.optimize_biases {
            let mut off = 0;
            for (w, b) in theta.weights.iter().zip(&theta.biases) {
                off += w.rows() * w.cols();
                g[off..off + b.len()].iter_mut().for_each(|v| *v = 0.0);
                off += b.len();
            }
        }
        let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !norm.is_finite() {
            return Err("non-finite gradient".into());
        }
        if norm == 0.0 {
            break;
        }
        // clip to unit length so one step moves at most eta
        let scale = dir * eta / norm.max(1.0);
        let flat: Vec<f64> = theta.flatten().iter().zip(&g).map(|(p, gi)| p + scale * gi).collect();
        theta = theta.unflatten_like(&flat);
        if feasible.project(&mut theta).map_err(|e| e.to_string())? {
            *projections += 1;
        }
        *iterations += 1;
        best = best.max(eval(&theta)?.abs());
        eta *= config.step_decay;
    }
    Ok(best)
}

fn run_task(
    template: &NetworkSpec,
    start: Params,
    sigma: &Matrix,
    data: &[Vec<f64>],
    config: &RademacherConfig,
    feasible: &dyn Feasible,
) -> TaskOutcome {
    let mut iterations = 0;
    let mut projections = 0;
    let mut best: Option<f64> = None;
    let mut reason = None;
    for dir in [1.0, -1.0] {
        match ascend(template, &start, sigma, data, config, feasible, dir, &mut iterations, &mut projections) {
            Ok(v) => best = Some(best.map_or(v, |b: f64| b.max(v))),
            Err(e) => reason = Some(e),
        }
    }
    // a non-finite iterate invalidates the whole restart
    if reason.is_some() {
        best = None;
    }
    TaskOutcome {
        best,
        iterations,
        projections,
        discard_reason: reason,
    }
}

fn aggregate(
    config: &RademacherConfig,
    outcomes: Vec<TaskOutcome>,
    coeffs_optimized: bool,
) -> Result<RademacherEstimate> {
    let mut diagnostics = OptimizerDiagnostics {
        coeffs_optimized,
        ..Default::default()
    };
    let mut per_sample = Vec::with_capacity(config.num_sigma);
    let mut restart_objectives = Vec::with_capacity(config.num_sigma);
    for chunk in outcomes.chunks(config.restarts) {
        let mut row = Vec::with_capacity(config.restarts);
        let mut best: Option<f64> = None;
        let mut last_reason = String::new();
        for o in chunk {
            diagnostics.iterations += o.iterations;
            diagnostics.projections += o.projections;
            if let Some(r) = &o.discard_reason {
                diagnostics.discarded_restarts += 1;
                diagnostics.discard_reasons.push(r.clone());
                last_reason = r.clone();
            }
            row.push(o.best);
            if let Some(v) = o.best {
                best = Some(best.map_or(v, |b: f64| b.max(v)));
            }
        }
        let Some(best) = best else {
            return Err(Error::AllRestartsDiscarded {
                count: config.restarts,
                last_reason,
            });
        };
        per_sample.push(best);
        restart_objectives.push(row);
    }
    let k = per_sample.len() as f64;
    let mean = per_sample.iter().sum::<f64>() / k;
    let stderr = if per_sample.len() > 1 {
        let var = per_sample.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1.0);
        (var / k).sqrt()
    } else {
        0.0
    };
    Ok(RademacherEstimate {
        mean,
        stderr,
        num_sigma_samples: config.num_sigma,
        restarts_per_sample: config.restarts,
        best_objective_per_sample: per_sample,
        restart_objectives,
        diagnostics,
    })
}

fn run_all<F>(config: &RademacherConfig, task: F) -> Vec<TaskOutcome>
where
    F: Fn(usize, usize) -> TaskOutcome + Sync,
{
    let pairs: Vec<(usize, usize)> = (0..config.num_sigma)
        .flat_map(|s| (0..config.restarts).map(move |r| (s, r)))
        .collect();
    if config.parallel {
        pairs.par_iter().map(|&(s, r)| task(s, r)).collect()
    } else {
        pairs.iter().map(|&(s, r)| task(s, r)).collect()
    }
}

/// Lower-bound estimate of the Rademacher complexity of the weight class
/// around `template` (activations, orders, `g` and widths taken from it).
pub fn estimate_sup(
    template: &NetworkSpec,
    class: &WeightClassSpec,
    data: &[Vec<f64>],
    config: &RademacherConfig,
) -> Result<RademacherEstimate> {
    config.validate()?;
    check_data(template, data)?;
    class.validate()?;
    for layer in &template.layers {
        let dim = class.check_orientation(&layer.weight)?;
        class.check_feasible(dim)?;
    }
    let coeff_budget = template
        .final_map
        .terms
        .iter()
        .map(|t| t.output.quadratic_form(&t.coeffs))
        .collect::<Result<Vec<_>>>()?;
    let feasible = ClassProjection {
        class,
        coeff_budget,
        template,
    };
    let base = Params::from_network(template, config.optimize_coeffs);
    let (n, m) = (data.len(), template.m);

    let outcomes = run_all(config, |s, r| {
        let sigma = draw_signs(&mut sigma_rng(config.seed, s), n, m);
        let mut start = base.clone();
        if r > 0 {
            let mut rng = restart_rng(config.seed, s, r);
            for w in start.weights.iter_mut() {
                w.data_mut()
                    .iter_mut()
                    .for_each(|v| *v += config.init_scale * rng.sample::<f64, _>(StandardNormal));
            }
            if config.optimize_biases {
                for b in start.biases.iter_mut() {
                    b.iter_mut()
                        .for_each(|v| *v += config.init_scale * rng.sample::<f64, _>(StandardNormal));
                }
            }
        }
        let mut projections = 0;
        match feasible.project(&mut start) {
            Ok(moved) => projections += moved as usize,
            Err(e) => {
                return TaskOutcome {
                    best: None,
                    iterations: 0,
                    projections,
                    discard_reason: Some(e.to_string()),
                }
            }
        }
        let mut out = run_task(template, start, &sigma, data, config, &feasible);
        out.projections += projections;
        out
    });
    aggregate(config, outcomes, config.optimize_coeffs)
}

/// Estimator restricted to a finite list of networks.
///
/// Projection is replaced by a snap to the nearest grid point in parameter
/// space, and restart `r` starts from `grid[r % len]`.
pub fn estimate_sup_on_grid(
    grid: &[NetworkSpec],
    data: &[Vec<f64>],
    config: &RademacherConfig,
) -> Result<RademacherEstimate> {
    config.validate()?;
    let template = check_grid(grid)?;
    check_data(template, data)?;
    let points: Vec<Params> = grid.iter().map(|net| Params::from_network(net, true)).collect();
    let feasible = GridProjection {
        flats: points.iter().map(Params::flatten).collect(),
        points,
    };
    let mut grid_config = config.clone();
    grid_config.optimize_coeffs = true;
    let (n, m) = (data.len(), template.m);
    let outcomes = run_all(config, |s, r| {
        let sigma = draw_signs(&mut sigma_rng(config.seed, s), n, m);
        let start = feasible.points[r % feasible.points.len()].clone();
        run_task(template, start, &sigma, data, &grid_config, &feasible)
    });
    aggregate(config, outcomes, true)
}

fn check_grid(grid: &[NetworkSpec]) -> Result<&NetworkSpec> {
    let first = grid
        .first()
        .ok_or_else(|| Error::InvalidArgument("grid of networks is empty".into()))?;
    for (k, net) in grid.iter().enumerate() {
        net.validate()?;
        if net.widths() != first.widths() || net.m != first.m || net.tasks != first.tasks {
            return Err(Error::Dimension(format!(
                "grid network {k} has widths {:?} (m = {}, T = {}), expected {:?} (m = {}, T = {})",
                net.widths(),
                net.m,
                net.tasks,
                first.widths(),
                first.m,
                first.tasks
            )));
        }
    }
    Ok(first)
}

/// Exact `2^{−nm} Σ_σ max_{f ∈ grid} (1/n)|Σ_i ⟨σ_i, f(x_i)⟩|` by full enumeration.
pub fn brute_force_oracle(grid: &[NetworkSpec], data: &[Vec<f64>], m: usize) -> Result<OracleResult> {
    let nm = data.len() * m;
    if nm > MAX_ENUMERATION {
        return Err(Error::EnumerationTooLarge { nm });
    }
    let template = check_grid(grid)?;
    if template.m != m {
        return Err(Error::Dimension(format!("grid outputs dimension {}, expected m = {m}", template.m)));
    }
    check_data(template, data)?;
    let values = grid
        .iter()
        .map(|net| network_values(net, data))
        .collect::<Result<Vec<_>>>()?;
    let size = 1usize << nm;
    let mut sigma = Matrix::zeros(data.len(), m);
    let mut total = 0.0;
    for mask in 0..size {
        for (bit, s) in sigma.data_mut().iter_mut().enumerate() {
            *s = if mask >> bit & 1 == 1 { 1.0 } else { -1.0 };
        }
        let mut best = 0.0f64;
        for v in &values {
            best = best.max(fixed_function_rademacher(v, &sigma)?);
        }
        total += best;
    }
    Ok(OracleResult {
        exact_value: total / size as f64,
        class_size: grid.len(),
        sigma_space_size: size,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{FinalMapSpec, FinalMapTerm, OutputMatrix};
    use crate::matana::WeightClassKind;
    use crate::network::{generate_network, ActivationSpec, GeneratorConfig, LayerSpec, WeightRecipe};
    use proptest::prelude::{any, prop_assert_eq, proptest};

    fn scalar_net(w: f64, b: f64, c: f64, act: Option<ActivationSpec>) -> NetworkSpec {
        let mut layers = Vec::new();
        if let Some(a) = act {
            layers.push(LayerSpec::new(Matrix::new(1, 1, vec![w]).unwrap(), vec![b], Some(a)));
            layers.push(LayerSpec::new(Matrix::identity(1), vec![0.0], None));
        } else {
            layers.push(LayerSpec::new(Matrix::new(1, 1, vec![w]).unwrap(), vec![b], None));
        }
        let k = layers.len();
        NetworkSpec {
            layers,
            final_map: FinalMapSpec {
                terms: vec![FinalMapTerm { rate: 1, output: OutputMatrix::identity(1), coeffs: vec![c] }],
                input_dim: 1,
                sobolev_order: 1.0,
            },
            sobolev_orders: vec![1.0; k + 1],
            tasks: 1,
            m: 1,
        }
    }

    fn rel_err(a: &[f64], b: &[f64]) -> f64 {
        let diff = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        let scale = b.iter().map(|y| y * y).sum::<f64>().sqrt().max(1e-300);
        diff / scale
    }

    fn points(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Vec<Vec<f64>> {
        (0..n).map(|_| (0..d).map(|_| rng.sample::<f64, _>(StandardNormal) * 0.7).collect()).collect()
    }

    #[test]
    fn fixed_function_cases() {
        assert_eq!(fixed_function_rademacher(&Matrix::zeros(3, 2), &Matrix::new(3, 2, vec![1.0; 6]).unwrap()).unwrap(), 0.0);
        let v = Matrix::new(1, 1, vec![3.0]).unwrap();
        let s = Matrix::new(1, 1, vec![-1.0]).unwrap();
        assert_eq!(fixed_function_rademacher(&v, &s).unwrap(), 3.0);
        assert!(fixed_function_rademacher(&Matrix::zeros(2, 2), &Matrix::zeros(2, 3)).is_err());

        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let vals = Matrix::new(5, 3, (0..15).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap();
        let sig = draw_signs(&mut rng, 5, 3);
        let mut acc = 0.0;
        for i in 0..5 {
            for j in 0..3 {
                acc += sig.get(i, j) * vals.get(i, j);
            }
        }
        assert_eq!(fixed_function_rademacher(&vals, &sig).unwrap(), (acc / 5.0).abs());
    }

    proptest! {
        #[test]
        fn scale_equivariance(vals in proptest::collection::vec(-5.0f64..5.0, 6), bits in proptest::collection::vec(any::<bool>(), 6), k in 0i32..6) {
            let lambda = 2f64.powi(k - 2);
            let v = Matrix::new(3, 2, vals.clone()).unwrap();
            let s = Matrix::new(3, 2, bits.iter().map(|&b| if b { 1.0 } else { -1.0 }).collect()).unwrap();
            let a = fixed_function_rademacher(&v.scaled(lambda), &s).unwrap();
            let b = fixed_function_rademacher(&v, &s).unwrap();
            prop_assert_eq!(a, lambda * b);
        }
    }

    #[test]
    fn zero_weight_scalar_gradient_matches_finite_differences() {
        let net = scalar_net(0.0, 0.3, 1.2, Some(ActivationSpec::SmoothedLeakyRelu { alpha: 0.5, beta: 1.0 }));
        let data = vec![vec![0.4], vec![-1.1], vec![0.9]];
        let sigma = Matrix::new(3, 1, vec![1.0, -1.0, 1.0]).unwrap();
        let theta = Params::from_network(&net, true);
        let a = gradient_of_objective(&net, &theta, &sigma, &data, GradientMode::Analytic).unwrap().flatten();
        let c = gradient_of_objective(&net, &theta, &sigma, &data, GradientMode::CentralDifference).unwrap().flatten();
        assert!(rel_err(&a, &c) < 1e-4, "{a:?} vs {c:?}");
    }

    #[test]
    fn random_nets_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for trial in 0..10 {
            let d = rng.random_range(1..4);
            let depth = rng.random_range(1..4);
            let mut cfg = GeneratorConfig::new(vec![d; depth + 1], rng.random_range(1..3), rng.random_range(1..3), WeightRecipe::Conditioned { kappa: 1.5 }, trial);
            if d == 1 {
                cfg.recipe = WeightRecipe::Orthogonal;
            }
            cfg.bias_scale = 0.3;
            let net = generate_network(&cfg).unwrap();
            let data = points(&mut rng, 4, d);
            let sigma = draw_signs(&mut rng, 4, net.m);
            let theta = Params::from_network(&net, true);
            let a = gradient_of_objective(&net, &theta, &sigma, &data, GradientMode::Analytic).unwrap().flatten();
            let c = gradient_of_objective(&net, &theta, &sigma, &data, GradientMode::CentralDifference).unwrap().flatten();
            assert!(rel_err(&a, &c) < 1e-4, "trial {trial}: {a:?} vs {c:?}");
        }
    }

    #[test]
    fn linear_net_gradient_matches_hand_derivation() {
        // f(x) = c e^{-(wx+b)^2}: ∂/∂w = Σ σ_i c e^{-u_i^2}(-2u_i)x_i / n, ∂/∂b without x_i, ∂/∂c = Σ σ_i e^{-u_i^2} / n
        let (w, b, c) = (0.7, -0.2, 1.5);
        let net = scalar_net(w, b, c, None);
        let data = vec![vec![0.5], vec![-0.3], vec![1.2], vec![0.0]];
        let sigma = Matrix::new(4, 1, vec![1.0, 1.0, -1.0, -1.0]).unwrap();
        let theta = Params::from_network(&net, true);
        let g = gradient_of_objective(&net, &theta, &sigma, &data, GradientMode::Analytic).unwrap();
        let (mut gw, mut gb, mut gc) = (0.0, 0.0, 0.0);
        for (x, s) in data.iter().zip(sigma.data()) {
            let u = w * x[0] + b;
            let e = (-u * u).exp();
            gw += s * c * e * (-2.0 * u) * x[0];
            gb += s * c * e * (-2.0 * u);
            gc += s * e;
        }
        assert!((g.weights[0].get(0, 0) - gw / 4.0).abs() < 1e-15);
        assert!((g.biases[0][0] - gb / 4.0).abs() < 1e-15);
        assert!((g.coeffs.unwrap()[0][0] - gc / 4.0).abs() < 1e-15);
    }

    #[test]
    fn gradient_is_ascent_direction() {
        let mut cfg = GeneratorConfig::new(vec![2, 2, 2], 2, 2, WeightRecipe::Conditioned { kappa: 2.0 }, 9);
        cfg.bias_scale = 0.2;
        let net = generate_network(&cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let data = points(&mut rng, 6, 2);
        let sigma = draw_signs(&mut rng, 6, 2);
        let theta = Params::from_network(&net, false);
        let g = gradient_of_objective(&net, &theta, &sigma, &data, GradientMode::Analytic).unwrap().flatten();
        let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(norm > 0.0);
        let eps = 1e-4 / norm;
        let moved: Vec<f64> = theta.flatten().iter().zip(&g).map(|(p, gi)| p + eps * gi).collect();
        let before = objective(&net, &sigma, &data).unwrap();
        let after = objective(&theta.unflatten_like(&moved).apply_to(&net), &sigma, &data).unwrap();
        assert!(after > before);
    }

    fn small_config(seed: u64) -> RademacherConfig {
        RademacherConfig {
            num_sigma: 12,
            restarts: 2,
            steps: 25,
            seed,
            ..Default::default()
        }
    }

    #[test]
    fn frozen_class_matches_fixed_function_average() {
        let net = scalar_net(1.0, 0.2, 1.0, None);
        let class = WeightClassSpec::new(WeightClassKind::Invertible, 1.0, 1.0).unwrap();
        let data = vec![vec![0.1], vec![-0.5], vec![0.8], vec![1.3]];
        let config = RademacherConfig {
            num_sigma: 200,
            restarts: 1,
            steps: 20,
            optimize_biases: false,
            seed: 5,
            ..Default::default()
        };
        let est = estimate_sup(&net, &class, &data, &config).unwrap();
        let values = network_values(&net, &data).unwrap();
        let mc: f64 = (0..200)
            .map(|s| fixed_function_rademacher(&values, &draw_signs(&mut sigma_rng(5, s), 4, 1)).unwrap())
            .sum::<f64>()
            / 200.0;
        assert!((est.mean - mc).abs() <= 2.0 * est.stderr + 1e-12);
    }

    #[test]
    fn zero_final_map_gives_zero() {
        let mut cfg = GeneratorConfig::new(vec![2, 2], 2, 2, WeightRecipe::Orthogonal, 3);
        cfg.bias_scale = 0.1;
        let mut net = generate_network(&cfg).unwrap();
        for t in &mut net.final_map.terms {
            t.coeffs = vec![0.0; 2];
        }
        let class = WeightClassSpec::new(WeightClassKind::Invertible, 2.0, 0.5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let data = points(&mut rng, 5, 2);
        let est = estimate_sup(&net, &class, &data, &small_config(1)).unwrap();
        assert_eq!(est.mean, 0.0);
        let est = estimate_sup(&net, &class, &data, &RademacherConfig { optimize_coeffs: true, ..small_config(1) }).unwrap();
        assert_eq!(est.mean, 0.0);
    }

    #[test]
    fn estimate_invariants_and_determinism() {
        let cfg = GeneratorConfig::new(vec![2, 2, 2], 1, 2, WeightRecipe::Conditioned { kappa: 1.5 }, 4);
        let net = generate_network(&cfg).unwrap();
        let class = WeightClassSpec::new(WeightClassKind::Invertible, 1.5, 0.5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let data = points(&mut rng, 5, 2);
        let a = estimate_sup(&net, &class, &data, &small_config(11)).unwrap();
        let b = estimate_sup(&net, &class, &data, &small_config(11)).unwrap();
        assert_eq!(a, b);
        let p = estimate_sup(&net, &class, &data, &RademacherConfig { parallel: true, ..small_config(11) }).unwrap();
        assert_eq!(a.restart_objectives, p.restart_objectives);
        assert_eq!(a.mean.to_bits(), p.mean.to_bits());

        let k = a.best_objective_per_sample.len() as f64;
        let mean = a.best_objective_per_sample.iter().sum::<f64>() / k;
        assert_eq!(a.mean, mean);
        let var = a.best_objective_per_sample.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1.0);
        assert!((a.stderr - (var / k).sqrt()).abs() < 1e-15);
        assert!(a.best_objective_per_sample.iter().all(|&v| v >= 0.0));
        assert!(a.diagnostics.iterations > 0);
    }

    #[test]
    fn optimization_improves_on_template() {
        let cfg = GeneratorConfig::new(vec![2, 2, 2], 1, 1, WeightRecipe::Conditioned { kappa: 1.5 }, 14);
        let net = generate_network(&cfg).unwrap();
        let class = WeightClassSpec::new(WeightClassKind::Invertible, 2.0, 0.25).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let data = points(&mut rng, 6, 2);
        let frozen = RademacherConfig { steps: 0, restarts: 1, ..small_config(2) };
        let base = estimate_sup(&net, &class, &data, &frozen).unwrap();
        let tuned = estimate_sup(&net, &class, &data, &RademacherConfig { restarts: 1, ..small_config(2) }).unwrap();
        for (t, b) in tuned.best_objective_per_sample.iter().zip(&base.best_objective_per_sample) {
            assert!(t >= b);
        }
        assert!(tuned.mean > base.mean);
    }

    #[test]
    fn estimate_rejects_infeasible_class() {
        let net = scalar_net(1.0, 0.0, 1.0, None);
        let class = WeightClassSpec { kind: WeightClassKind::Invertible, c: 1.0, d: 2.0 };
        assert!(estimate_sup(&net, &class, &[vec![0.0]], &small_config(0)).is_err());
    }

    #[test]
    fn overflow_discards_restarts() {
        let net = scalar_net(1.0, 0.0, 1.0, None);
        let class = WeightClassSpec::new(WeightClassKind::Invertible, 1.0, 1.0).unwrap();
        let err = estimate_sup(&net, &class, &[vec![f64::INFINITY]], &small_config(0)).unwrap_err();
        assert!(matches!(err, Error::AllRestartsDiscarded { .. }));
    }

    fn grid9() -> Vec<NetworkSpec> {
        let mut grid = Vec::new();
        for w in [0.5, 1.0, 2.0] {
            for b in [-1.0, 0.0, 1.0] {
                grid.push(scalar_net(w, b, 1.0, None));
            }
        }
        grid
    }

    #[test]
    fn oracle_cases() {
        let zero = scalar_net(1.0, 0.0, 0.0, None);
        let data = vec![vec![0.3], vec![0.1]];
        assert_eq!(brute_force_oracle(&[zero], &data, 1).unwrap().exact_value, 0.0);

        // constant function c = e^{-w^2 * 0} with x = 0 on both points
        let c = 1.7;
        let constant = scalar_net(1.0, 0.0, c, None);
        let r = brute_force_oracle(&[constant], &[vec![0.0], vec![0.0]], 1).unwrap();
        assert!((r.exact_value - c / 2.0).abs() < 1e-15);
        assert_eq!(r.sigma_space_size, 4);

        let big: Vec<Vec<f64>> = (0..17).map(|_| vec![0.0]).collect();
        assert!(matches!(brute_force_oracle(&grid9(), &big, 1), Err(Error::EnumerationTooLarge { nm: 17 })));
    }

    #[test]
    fn oracle_matches_nested_loops() {
        let data = [0.4, -0.9, 1.3];
        let r = brute_force_oracle(&grid9(), &data.map(|x| vec![x]), 1).unwrap();
        let mut total = 0.0;
        for s0 in [-1.0, 1.0] {
            for s1 in [-1.0, 1.0] {
                for s2 in [-1.0, 1.0] {
                    let mut best = 0.0f64;
                    for w in [0.5, 1.0, 2.0] {
                        for b in [-1.0, 0.0, 1.0] {
                            let f = |x: f64| (-(w * x + b) * (w * x + b)).exp();
                            let v = (s0 * f(data[0]) + s1 * f(data[1]) + s2 * f(data[2])) / 3.0;
                            best = best.max(v.abs());
                        }
                    }
                    total += best;
                }
            }
        }
        assert_eq!(r.exact_value, total / 8.0);
        assert_eq!(r.class_size, 9);
    }

    #[test]
    fn grid_estimate_matches_oracle() {
        let data: Vec<Vec<f64>> = [0.4, -0.9, 1.3, 0.1].iter().map(|&x| vec![x]).collect();
        let grid = grid9();
        let oracle = brute_force_oracle(&grid, &data, 1).unwrap();
        let config = RademacherConfig { num_sigma: 64, restarts: 9, steps: 5, seed: 3, ..Default::default() };
        let est = estimate_sup_on_grid(&grid, &data, &config).unwrap();
        assert!((est.mean - oracle.exact_value).abs() <= 3.0 * est.stderr);
    }
}
