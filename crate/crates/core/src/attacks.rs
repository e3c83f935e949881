//! Iterative sign-gradient attacks under an L-infinity budget.
//!
//! All algorithms share the same outer loop: compute an ascent direction,
//! take a step of size `alpha` along its sign, then project back onto the
//! `epsilon` ball around the clean input and onto the unit box.
//!
//! * `ifgsm`: step along the sign of the current gradient.
//! * `mifgsm`: accumulate L1-normalized gradients into a momentum buffer.
//! * `respa`: momentum over a neighborhood-averaged gradient of a
//!   flatness-regularized loss. Each neighbor `x_i` is pushed to
//!   `x* = x_i - rho * r / ||r||` where `r` is the residual between the
//!   neighbor's gradient and an exponential moving average of past
//!   averaged gradients, and contributes `(1 - gamma) * grad J(x_i) + gamma * grad J(x*)`.
//! * `flat_current_grad`: the same loop with `r` replaced by the raw
//!   neighbor gradient, i.e. the sharpest-direction perturbed point.
//! * `none`: returns the clean input; a control for evaluation.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::models::{LabeledSample, LossOracle};
use crate::tensor::{l1_norm, l2_norm, sample_uniform_box, sign, SeededRng, Vector};

/// Norms below this are treated as zero when normalizing directions.
pub const NORM_FLOOR: f64 = 1e-12;

/// Slack allowed on the budget check, for rounding in `x_orig +/- epsilon`.
pub const BUDGET_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Algorithm {
    Identity,
    Ifgsm,
    Mifgsm,
    FlatCurrentGrad,
    Respa,
}

impl Algorithm {
    pub const ALL: [Algorithm; 5] = [
        Algorithm::Identity,
        Algorithm::Ifgsm,
        Algorithm::Mifgsm,
        Algorithm::FlatCurrentGrad,
        Algorithm::Respa,
    ];

    pub fn id(self) -> &'static str {
        match self {
            Algorithm::Identity => "none",
            Algorithm::Ifgsm => "ifgsm",
            Algorithm::Mifgsm => "mifgsm",
            Algorithm::FlatCurrentGrad => "flat_current_grad",
            Algorithm::Respa => "respa",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.id() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown attack `{s}`")))
    }
}

/// Norm used to normalize the perturbation direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PerturbNorm {
    #[default]
    L2,
    L1,
}

impl PerturbNorm {
    pub fn of(self, v: &[f64]) -> f64 {
        match self {
            PerturbNorm::L2 => l2_norm(v),
            PerturbNorm::L1 => l1_norm(v),
        }
    }
}

/// Where the gradient entering the reference/residual pair is taken.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ReferencePoint {
    /// At each neighborhood sample, giving every sample its own residual.
    #[default]
    PerSample,
    /// Once per iteration at the current adversarial iterate, shared by all
    /// samples. Costs one extra gradient per step.
    Iterate,
}

/// Attack hyperparameters, in normalized `[0, 1]` pixel units.
///
/// The defaults correspond to `epsilon = 16`, `alpha = 1.6` on the 0-255
/// scale, `T = 10`, `mu = 1`, `N = 5`, `theta = 0.6`, `gamma = 0.6` and a
/// sampling half-width of `1.5 * epsilon`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttackConfig {
    pub epsilon: f64,
    pub alpha: f64,
    pub iterations: usize,
    pub mu: f64,
    pub samples: usize,
    pub theta: f64,
    pub gamma: f64,
    /// Sampling half-width as a multiple of `epsilon`.
    pub beta: f64,
    /// Perturbed-point radius; `None` means `epsilon`.
    pub rho: Option<f64>,
    pub norm: PerturbNorm,
    pub reference: ReferencePoint,
    pub seed: u64,
}

impl Default for AttackConfig {
    fn default() -> Self {
        AttackConfig {
            epsilon: 16.0 / 255.0,
            alpha: 1.6 / 255.0,
            iterations: 10,
            mu: 1.0,
            samples: 5,
            theta: 0.6,
            gamma: 0.6,
            beta: 1.5,
            rho: None,
            norm: PerturbNorm::L2,
            reference: ReferencePoint::PerSample,
            seed: 0,
        }
    }
}

impl AttackConfig {
    pub fn rho(&self) -> f64 {
        self.rho.unwrap_or(self.epsilon)
    }

    pub fn sampling_half_width(&self) -> f64 {
        self.beta * self.epsilon
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        AttackConfig { seed, ..self.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if !(self.epsilon > 0.0) {
            return fail("epsilon must be positive");
        }
        if !(self.alpha > 0.0) {
            return fail("alpha must be positive");
        }
        if self.iterations == 0 {
            return fail("iterations must be at least 1");
        }
        if self.samples == 0 {
            return fail("samples must be at least 1");
        }
        // theta = 0 is admitted for sweeps: the residual vanishes and the
        // attack degrades to neighborhood-averaged momentum.
        if !(0.0..1.0).contains(&self.theta) {
            return fail("theta must lie in [0, 1)");
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return fail("gamma must lie in [0, 1]");
        }
        if !(self.beta >= 0.0) || !self.beta.is_finite() {
            return fail("beta must be non-negative");
        }
        if !(self.rho() >= 0.0) || !self.rho().is_finite() {
            return fail("rho must be non-negative");
        }
        if !(self.mu >= 0.0) || !self.mu.is_finite() {
            return fail("mu must be non-negative");
        }
        Ok(())
    }
}

/// Mutable per-run state.
#[derive(Debug, Clone, PartialEq)]
pub struct AttackState {
    pub x_adv: Vector,
    /// Momentum accumulator.
    pub momentum: Vector,
    /// Moving average of past averaged gradients.
    pub ema: Vector,
    pub t: usize,
}

impl AttackState {
    pub fn initial(x_orig: &[f64]) -> Self {
        AttackState {
            x_adv: Vector::from(x_orig.to_vec()),
            momentum: Vector::zeros(x_orig.len()),
            ema: Vector::zeros(x_orig.len()),
            t: 0,
        }
    }
}

/// Diagnostics of one iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    /// Iteration number, starting at 1.
    pub t: usize,
    /// Loss at the iterate produced by this step.
    pub loss: f64,
    /// Mean over samples of `J(x*) - J(x_i)`; zero for plain sign attacks.
    pub flatness: f64,
    /// Mean norm of the perturbation direction over samples.
    pub residual_norm: f64,
    /// L-infinity size of the applied update.
    pub step: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct AttackTrace {
    pub records: Vec<StepRecord>,
}

impl AttackTrace {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// One CSV row per iteration: `t,loss,flatness,residual_norm`.
    pub fn to_delimited(&self) -> String {
        let mut out = String::from("t,loss,flatness,residual_norm\n");
        for r in &self.records {
            out.push_str(&format!(
                "{},{:?},{:?},{:?}\n",
                r.t, r.loss, r.flatness, r.residual_norm
            ));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackOutcome {
    pub adversarial: Vector,
    pub trace: AttackTrace,
}

/// `M = theta * e + (1 - theta) * grad`
pub fn reference_gradient(ema: &[f64], grad: &[f64], theta: f64) -> Vector {
    assert_eq!(ema.len(), grad.len(), "vector length mismatch");
    ema.iter()
        .zip(grad)
        .map(|(e, g)| theta * e + (1.0 - theta) * g)
        .collect()
}

/// `g_res = grad - M`
pub fn residual_gradient(grad: &[f64], reference: &[f64]) -> Vector {
    assert_eq!(grad.len(), reference.len(), "vector length mismatch");
    grad.iter().zip(reference).map(|(g, m)| g - m).collect()
}

/// `x* = x - rho * dir / ||dir||`, or `x` itself when `||dir|| < NORM_FLOOR`.
pub fn perturbed_point(x: &[f64], direction: &[f64], rho: f64, norm: PerturbNorm) -> Vector {
    assert_eq!(x.len(), direction.len(), "vector length mismatch");
    let n = norm.of(direction);
    if n < NORM_FLOOR {
        return Vector::from(x.to_vec());
    }
    x.iter().zip(direction).map(|(xi, di)| xi - rho * (di / n)).collect()
}

/// `(1 - gamma) * at_sample + gamma * at_perturbed`, exact at the endpoints.
pub fn combine_gradients(at_sample: &[f64], at_perturbed: &[f64], gamma: f64) -> Vector {
    if gamma == 0.0 {
        return Vector::from(at_sample.to_vec());
    }
    if gamma == 1.0 {
        return Vector::from(at_perturbed.to_vec());
    }
    at_sample
        .iter()
        .zip(at_perturbed)
        .map(|(a, b)| (1.0 - gamma) * a + gamma * b)
        .collect()
}

/// Gradient of the regularized per-sample loss
/// `(1 - gamma) * J(x_i) + gamma * J(x*)`.
pub fn respa_sample_gradient<O: LossOracle + ?Sized>(
    oracle: &O,
    x_i: &[f64],
    label: usize,
    x_star: &[f64],
    gamma: f64,
) -> Vector {
    if gamma == 1.0 {
        return oracle.gradient(x_star, label);
    }
    let at_sample = oracle.gradient(x_i, label);
    if gamma == 0.0 || x_i == x_star {
        return at_sample;
    }
    combine_gradients(&at_sample, &oracle.gradient(x_star, label), gamma)
}

/// Projects onto the `epsilon` ball around `x_orig`, then onto `[0, 1]`.
pub fn clip_to_budget(x: &mut [f64], x_orig: &[f64], epsilon: f64) {
    for (v, o) in x.iter_mut().zip(x_orig) {
        *v = v.max(o - epsilon).min(o + epsilon).clamp(0.0, 1.0);
    }
}

/// `x + alpha * sign(direction)`, clipped.
fn sign_step(x_adv: &[f64], direction: &[f64], x_orig: &[f64], cfg: &AttackConfig) -> Vector {
    let mut next: Vector = x_adv
        .iter()
        .zip(direction)
        .map(|(x, d)| x + cfg.alpha * sign(*d))
        .collect();
    clip_to_budget(&mut next, x_orig, cfg.epsilon);
    next
}

/// `g <- mu * g + avg / ||avg||_1`; the normalized term is dropped when
/// `||avg||_1 < NORM_FLOOR`.
fn momentum_update(momentum: &mut Vector, avg: &[f64], mu: f64) {
    let n = l1_norm(avg);
    for (g, a) in momentum.iter_mut().zip(avg) {
        *g = if n < NORM_FLOOR { mu * *g } else { mu * *g + a / n };
    }
}

fn linf_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

/// Returns an error if `x` leaves the budget or the unit box.
pub fn check_budget(x: &[f64], x_orig: &[f64], epsilon: f64, iteration: usize) -> Result<()> {
    for (i, (v, o)) in x.iter().zip(x_orig).enumerate() {
        if !v.is_finite() || (v - o).abs() > epsilon + BUDGET_SLACK || !(0.0..=1.0).contains(v) {
            return Err(Error::BudgetViolation {
                iteration,
                detail: format!("coordinate {i}: {v} (clean {o}, epsilon {epsilon})"),
            });
        }
    }
    Ok(())
}

/// One iterative FGSM step.
pub fn ifgsm_step<O: LossOracle + ?Sized>(
    oracle: &O,
    state: &AttackState,
    x_orig: &[f64],
    label: usize,
    cfg: &AttackConfig,
) -> (AttackState, StepRecord) {
    let grad = oracle.gradient(&state.x_adv, label);
    let x_next = sign_step(&state.x_adv, &grad, x_orig, cfg);
    finish(
        oracle,
        state,
        x_next,
        state.momentum.clone(),
        state.ema.clone(),
        label,
        0.0,
        0.0,
    )
}

/// One momentum iterative FGSM step.
pub fn mifgsm_step<O: LossOracle + ?Sized>(
    oracle: &O,
    state: &AttackState,
    x_orig: &[f64],
    label: usize,
    cfg: &AttackConfig,
) -> (AttackState, StepRecord) {
    let grad = oracle.gradient(&state.x_adv, label);
    let mut momentum = state.momentum.clone();
    momentum_update(&mut momentum, &grad, cfg.mu);
    let x_next = sign_step(&state.x_adv, &momentum, x_orig, cfg);
    finish(oracle, state, x_next, momentum, state.ema.clone(), label, 0.0, 0.0)
}

#[allow(clippy::too_many_arguments)]
fn finish<O: LossOracle + ?Sized>(
    oracle: &O,
    state: &AttackState,
    x_next: Vector,
    momentum: Vector,
    ema: Vector,
    label: usize,
    flatness: f64,
    residual_norm: f64,
) -> (AttackState, StepRecord) {
    let record = StepRecord {
        t: state.t + 1,
        loss: oracle.loss(&x_next, label),
        flatness,
        residual_norm,
        step: linf_distance(&x_next, &state.x_adv),
    };
    let next = AttackState {
        x_adv: x_next,
        momentum,
        ema,
        t: state.t + 1,
    };
    (next, record)
}

/// Direction used to place the perturbed point.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FlatnessDirection {
    /// Residual between the gradient and its moving-average reference.
    Residual,
    /// The raw gradient at the sample.
    CurrentGradient,
}

/// One step of the neighborhood-sampled, flatness-regularized momentum
/// attack, in this order:
///
/// 1. draw `N` neighbors `x_i = x_adv + lambda_i`, `lambda_i` uniform in
///    the box of half-width `beta * epsilon`;
/// 2. per neighbor, pick the direction (residual `grad_i - M_i` with
///    `M_i = theta * e + (1 - theta) * grad_i`, or `grad_i` itself), form
///    `x*` and the combined gradient;
/// 3. average the combined gradients into `g_bar`;
/// 4. `e <- theta * e + (1 - theta) * g_bar`;
/// 5. `g <- mu * g + g_bar / ||g_bar||_1`;
/// 6. `x_adv <- clip(x_adv + alpha * sign(g))`.
#[allow(clippy::too_many_arguments)]
pub fn flat_step<O: LossOracle + ?Sized>(
    oracle: &O,
    state: &AttackState,
    x_orig: &[f64],
    label: usize,
    cfg: &AttackConfig,
    rng: &mut SeededRng,
    direction: FlatnessDirection,
) -> (AttackState, StepRecord) {
    let dim = state.x_adv.len();
    let rho = cfg.rho();
    let half_width = cfg.sampling_half_width();

    let shared_residual = match (direction, cfg.reference) {
        (FlatnessDirection::Residual, ReferencePoint::Iterate) => {
            let grad = oracle.gradient(&state.x_adv, label);
            let reference = reference_gradient(&state.ema, &grad, cfg.theta);
            Some(residual_gradient(&grad, &reference))
        }
        _ => None,
    };

    let mut sum = Vector::zeros(dim);
    let mut flatness = 0.0;
    let mut residual_norm = 0.0;
    for _ in 0..cfg.samples {
        let x_i = state.x_adv.add(&sample_uniform_box(rng, dim, half_width));
        let (loss_i, grad_i) = oracle.loss_and_gradient(&x_i, label);
        let dir = match (direction, &shared_residual) {
            (FlatnessDirection::CurrentGradient, _) => grad_i.clone(),
            (FlatnessDirection::Residual, Some(shared)) => shared.clone(),
            (FlatnessDirection::Residual, None) => {
                let reference = reference_gradient(&state.ema, &grad_i, cfg.theta);
                residual_gradient(&grad_i, &reference)
            }
        };
        residual_norm += cfg.norm.of(&dir);
        let x_star = perturbed_point(&x_i, &dir, rho, cfg.norm);

        let combined = if x_star == x_i {
            grad_i
        } else if cfg.gamma == 0.0 {
            flatness += oracle.loss(&x_star, label) - loss_i;
            grad_i
        } else {
            let (loss_star, grad_star) = oracle.loss_and_gradient(&x_star, label);
            flatness += loss_star - loss_i;
            combine_gradients(&grad_i, &grad_star, cfg.gamma)
        };
        for (s, c) in sum.iter_mut().zip(combined.iter()) {
            *s += c;
        }
    }
    let n = cfg.samples as f64;
    let avg: Vector = sum.iter().map(|s| s / n).collect();

    let ema = reference_gradient(&state.ema, &avg, cfg.theta);
    let mut momentum = state.momentum.clone();
    momentum_update(&mut momentum, &avg, cfg.mu);
    let x_next = sign_step(&state.x_adv, &momentum, x_orig, cfg);
    finish(
        oracle,
        state,
        x_next,
        momentum,
        ema,
        label,
        flatness / n,
        residual_norm / n,
    )
}

/// One residual-perturbation step; see [`flat_step`].
pub fn respa_step<O: LossOracle + ?Sized>(
    oracle: &O,
    state: &AttackState,
    x_orig: &[f64],
    label: usize,
    cfg: &AttackConfig,
    rng: &mut SeededRng,
) -> (AttackState, StepRecord) {
    flat_step(oracle, state, x_orig, label, cfg, rng, FlatnessDirection::Residual)
}

/// Runs `cfg.iterations` steps of `algorithm` from `x`, checking the budget
/// after every step. Randomness comes from `cfg.seed` only.
pub fn run_attack_on<O: LossOracle + ?Sized>(
    algorithm: Algorithm,
    oracle: &O,
    x: &[f64],
    label: usize,
    cfg: &AttackConfig,
) -> Result<AttackOutcome> {
    cfg.validate()?;
    if x.len() != oracle.input_dim() {
        return Err(Error::DimensionMismatch {
            expected: oracle.input_dim(),
            actual: x.len(),
        });
    }
    let mut rng = SeededRng::new(cfg.seed);
    let mut state = AttackState::initial(x);
    let mut trace = AttackTrace {
        records: Vec::with_capacity(cfg.iterations),
    };
    for _ in 0..cfg.iterations {
        let (next, record) = match algorithm {
            Algorithm::Identity => {
                let loss = oracle.loss(&state.x_adv, label);
                let record = StepRecord {
                    t: state.t + 1,
                    loss,
                    flatness: 0.0,
                    residual_norm: 0.0,
                    step: 0.0,
                };
                let mut next = state.clone();
                next.t += 1;
                (next, record)
            }
            Algorithm::Ifgsm => ifgsm_step(oracle, &state, x, label, cfg),
            Algorithm::Mifgsm => mifgsm_step(oracle, &state, x, label, cfg),
            Algorithm::FlatCurrentGrad => flat_step(
                oracle,
                &state,
                x,
                label,
                cfg,
                &mut rng,
                FlatnessDirection::CurrentGradient,
            ),
            Algorithm::Respa => respa_step(oracle, &state, x, label, cfg, &mut rng),
        };
        check_budget(&next.x_adv, x, cfg.epsilon, next.t)?;
        trace.records.push(record);
        state = next;
    }
    Ok(AttackOutcome {
        adversarial: state.x_adv,
        trace,
    })
}

pub fn run_attack<O: LossOracle + ?Sized>(
    algorithm: Algorithm,
    oracle: &O,
    sample: &LabeledSample,
    cfg: &AttackConfig,
) -> Result<AttackOutcome> {
    run_attack_on(algorithm, oracle, sample.x(), sample.label(), cfg)
}
