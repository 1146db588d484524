//! Inverse design: loss definitions over the simulated observables, exact
//! reverse-mode gradients through the split-step propagation, and an Adam
//! loop with per-group learning rates.
//!
//! A loss evaluation is a deterministic function of (theta, master seed,
//! worker-independent reduction order), so finite differences of
//! `loss_value` agree with `loss_and_grad` to first order even though the
//! observables are Monte Carlo estimates.

mod adjoint;

use crate::error::SpdcError;
use crate::grid::{SimGrid, WaveParams};
use crate::medium::{ParamVector, TrainGroups};
use crate::modes::{ModeSet, MIN_POINTS_PER_WAIST};
use crate::observables::{
    detection_fields, first_order_moments, g2, sample_mode_amplitudes, CoincidenceMatrix,
    CorrelationData,
};
use crate::propagator::{couplings_from_theta, NoiseSpec};
use crate::rng::{complex_gaussian, NoiseLane, StreamKey};
use crate::tomography::{
    generators, measurement_plan, reconstruct_rho, simulate_projections, DensityMatrix,
};
use crate::Result;
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

/// What the optimizer steers the source toward.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum TargetKind {
    /// Post-selected coincidence probabilities; labels must match the
    /// detection set after post-selection.
    Coincidence { matrix: CoincidenceMatrix },
    /// Two-qudit density matrix (row-major (d^2)^2 entries) over the
    /// computational modes, which index into the detection set.
    DensityMatrix {
        rho: Vec<C64>,
        dim: usize,
        comp_modes: Vec<usize>,
    },
}

/// Target plus loss weights. Coincidence targets use w_kl and w_l1;
/// density targets use w_trace against the raw (un-clipped) reconstruction.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TargetSpec {
    pub kind: TargetKind,
    pub w_kl: f64,
    pub w_l1: f64,
    pub w_trace: f64,
}

impl TargetSpec {
    pub fn coincidence(matrix: CoincidenceMatrix, w_kl: f64, w_l1: f64) -> Self {
        TargetSpec {
            kind: TargetKind::Coincidence { matrix },
            w_kl,
            w_l1,
            w_trace: 0.0,
        }
    }

    pub fn density(rho: Vec<C64>, dim: usize, comp_modes: Vec<usize>, w_trace: f64) -> Self {
        TargetSpec {
            kind: TargetKind::DensityMatrix {
                rho,
                dim,
                comp_modes,
            },
            w_kl: 0.0,
            w_l1: 0.0,
            w_trace,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, w) in [
            ("w_kl", self.w_kl),
            ("w_l1", self.w_l1),
            ("w_trace", self.w_trace),
        ] {
            if !(w >= 0.0) || !w.is_finite() {
                return Err(SpdcError::config(
                    name,
                    format!("weight must be finite and >= 0, got {w}"),
                ));
            }
        }
        match &self.kind {
            TargetKind::Coincidence { matrix } => {
                if self.w_kl + self.w_l1 <= 0.0 {
                    return Err(SpdcError::config(
                        "target.weights",
                        "coincidence target needs w_kl + w_l1 > 0",
                    ));
                }
                if matrix.row_labels.len() != matrix.col_labels.len()
                    || matrix.values.len() != matrix.row_labels.len() * matrix.col_labels.len()
                {
                    return Err(SpdcError::shape(
                        "coincidence target",
                        format!(
                            "{0}x{0} square matrix",
                            matrix.row_labels.len()
                        ),
                        format!(
                            "{}x{} with {} values",
                            matrix.row_labels.len(),
                            matrix.col_labels.len(),
                            matrix.values.len()
                        ),
                    ));
                }
                let mut sum = 0.0;
                for v in &matrix.values {
                    if !(*v >= 0.0) || !v.is_finite() {
                        return Err(SpdcError::config(
                            "target.matrix",
                            format!("entries must be finite and >= 0, got {v}"),
                        ));
                    }
                    sum += v;
                }
                if (sum - 1.0).abs() > 1e-6 {
                    return Err(SpdcError::Normalization {
                        context: "target.matrix".into(),
                        reason: format!("probabilities sum to {sum}, expected 1"),
                    });
                }
            }
            TargetKind::DensityMatrix {
                rho,
                dim,
                comp_modes,
            } => {
                if self.w_trace <= 0.0 {
                    return Err(SpdcError::config(
                        "target.weights",
                        "density target needs w_trace > 0",
                    ));
                }
                // dimension support is decided by the generator sets
                generators(*dim)?;
                let n = dim * dim;
                if rho.len() != n * n {
                    return Err(SpdcError::shape(
                        "target.rho",
                        format!("{n}x{n}"),
                        format!("{} entries", rho.len()),
                    ));
                }
                if comp_modes.len() != *dim {
                    return Err(SpdcError::shape(
                        "target.comp_modes",
                        format!("{dim} mode indices"),
                        format!("{}", comp_modes.len()),
                    ));
                }
                for (i, a) in comp_modes.iter().enumerate() {
                    if comp_modes[..i].contains(a) {
                        return Err(SpdcError::config(
                            "target.comp_modes",
                            format!("mode index {a} listed twice"),
                        ));
                    }
                }
                let mut trace = 0.0;
                for r in 0..n {
                    trace += rho[r * n + r].re;
                    if rho[r * n + r].im.abs() > 1e-9 {
                        return Err(SpdcError::config(
                            "target.rho",
                            format!("diagonal entry {r} has imaginary part"),
                        ));
                    }
                    for c in 0..n {
                        if (rho[r * n + c] - rho[c * n + r].conj()).norm() > 1e-9 {
                            return Err(SpdcError::config(
                                "target.rho",
                                format!("not Hermitian at ({r}, {c})"),
                            ));
                        }
                    }
                }
                if (trace - 1.0).abs() > 1e-6 {
                    return Err(SpdcError::Normalization {
                        context: "target.rho".into(),
                        reason: format!("trace {trace}, expected 1"),
                    });
                }
            }
        }
        Ok(())
    }
}

/// Everything a loss evaluation needs besides theta.
#[derive(Debug, Clone)]
pub struct ForwardModel {
    pub grid: SimGrid,
    pub waves: WaveParams,
    pub noise: NoiseSpec,
    pub amplitude: f64,
    pub detection: ModeSet,
}

impl ForwardModel {
    pub fn validate(&self) -> Result<()> {
        self.noise.validate()?;
        self.detection.validate()?;
        if !(self.amplitude > 0.0) || !self.amplitude.is_finite() {
            return Err(SpdcError::config(
                "model.amplitude",
                format!("must be positive and finite, got {}", self.amplitude),
            ));
        }
        Ok(())
    }
}

/// Adam hyperparameters and schedule. Coefficients and waists carry
/// separate base rates because waists live on a metre scale.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OptimSettings {
    pub epochs: usize,
    pub lr_coeff: f64,
    pub lr_waist: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Cosine decay from the base rate to 5% of it over `epochs`.
    pub cosine_decay: bool,
    /// Abort when the loss exceeds this multiple of the first epoch's loss.
    pub divergence_factor: f64,
}

impl Default for OptimSettings {
    fn default() -> Self {
        OptimSettings {
            epochs: 60,
            lr_coeff: 1e-2,
            lr_waist: 1e-6,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            cosine_decay: true,
            divergence_factor: 1e3,
        }
    }
}

impl OptimSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr_coeff >= 0.0) || !(self.lr_waist >= 0.0) {
            return Err(SpdcError::config("optim.lr", "learning rates must be >= 0"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(SpdcError::config(
                "optim.betas",
                format!("betas must lie in [0, 1), got {} / {}", self.beta1, self.beta2),
            ));
        }
        if !(self.divergence_factor > 0.0) {
            return Err(SpdcError::config(
                "optim.divergence_factor",
                "must be positive",
            ));
        }
        Ok(())
    }
}

/// Complete resumable optimizer state; this is what checkpoints carry.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainState {
    pub theta: ParamVector,
    pub optim: OptimSettings,
    /// Global epoch counter across resumed runs.
    pub iteration: usize,
    pub loss_history: Vec<f64>,
    pub adam_m: Vec<f64>,
    pub adam_v: Vec<f64>,
    /// Frozen copy of the noise seed the run was started with; training
    /// must never resample it.
    pub master_seed: u64,
}

impl TrainState {
    pub fn new(theta: ParamVector, optim: OptimSettings, master_seed: u64) -> Result<Self> {
        theta.validate()?;
        optim.validate()?;
        let n = theta.n_scalars();
        Ok(TrainState {
            theta,
            optim,
            iteration: 0,
            loss_history: Vec::new(),
            adam_m: vec![0.0; n],
            adam_v: vec![0.0; n],
            master_seed,
        })
    }
}

/// Seeded initialization: complex coefficients drawn from N(0, 0.1^2) per
/// quadrature, plus a unit coefficient on the fundamental of each basis so
/// the start is a bright Gaussian-like source. Waists copy the basis
/// functions' own waists.
pub fn init_theta(
    pump_basis: ModeSet,
    crystal_basis: ModeSet,
    groups: TrainGroups,
    seed: u64,
) -> Result<ParamVector> {
    let key = StreamKey {
        master_seed: seed,
        realization: 0,
        lane: NoiseLane::IdlerVacuum,
    };
    let mut cell = 0u64;
    let mut draw = |set: &ModeSet| -> Vec<C64> {
        set.specs
            .iter()
            .map(|_| {
                let c = complex_gaussian(key, cell, 0.1);
                cell += 1;
                c
            })
            .collect()
    };
    let mut pump_coeffs = draw(&pump_basis);
    let mut crystal_coeffs = draw(&crystal_basis);
    let fundamental = |set: &ModeSet| {
        set.specs
            .iter()
            .position(|s| s.order() == 0)
            .unwrap_or(0)
    };
    pump_coeffs[fundamental(&pump_basis)] += 1.0;
    crystal_coeffs[fundamental(&crystal_basis)] += 1.0;
    let pump_waists: Vec<f64> = pump_basis.specs.iter().map(|s| s.waist).collect();
    let crystal_waists: Vec<f64> = crystal_basis.specs.iter().map(|s| s.waist).collect();
    ParamVector::new(
        pump_basis,
        pump_coeffs,
        pump_waists,
        crystal_basis,
        crystal_coeffs,
        crystal_waists,
        groups,
    )
}

fn forward_and_head(
    theta: &ParamVector,
    target: &TargetSpec,
    model: &ForwardModel,
    workers: usize,
) -> Result<(
    crate::observables::ModeAmplitudeSamples,
    CorrelationData,
    adjoint::HeadResult,
)> {
    target.validate()?;
    model.validate()?;
    let samples = sample_mode_amplitudes(
        theta,
        model.amplitude,
        &model.waves,
        &model.grid,
        &model.noise,
        &model.detection,
        workers,
    )?;
    let corr = first_order_moments(&samples)?;
    let head = match &target.kind {
        TargetKind::Coincidence { matrix } => {
            adjoint::coincidence_head(&corr, matrix, target.w_kl, target.w_l1)?
        }
        TargetKind::DensityMatrix {
            rho,
            dim,
            comp_modes,
        } => adjoint::density_head(&corr, rho, *dim, comp_modes, target.w_trace)?,
    };
    Ok((samples, corr, head))
}

/// Loss without gradients; shares every arithmetic step with
/// `loss_and_grad`, so the two agree bitwise.
pub fn loss_value(
    theta: &ParamVector,
    target: &TargetSpec,
    model: &ForwardModel,
    workers: usize,
) -> Result<f64> {
    forward_and_head(theta, target, model, workers).map(|(_, _, head)| head.loss)
}

/// Loss and its exact gradient in `ParamVector::flatten` order. Masked
/// scalars get exactly 0.0; any non-finite unmasked component is an error
/// naming the scalar.
pub fn loss_and_grad(
    theta: &ParamVector,
    target: &TargetSpec,
    model: &ForwardModel,
    workers: usize,
) -> Result<(f64, Vec<f64>)> {
    let (samples, _corr, head) = forward_and_head(theta, target, model, workers)?;
    let cot = adjoint::amplitude_cotangents(&samples, &head);
    let modes_i = detection_fields(&model.detection, &model.grid, model.waves.k_i)?;
    let modes_s = detection_fields(&model.detection, &model.grid, model.waves.k_s)?;
    let profile = couplings_from_theta(theta, model.amplitude, &model.waves, &model.grid)?;
    let g_planes = adjoint::kappa_cotangents(
        &profile,
        &model.grid,
        &model.waves,
        &model.noise,
        &modes_i,
        &modes_s,
        &cot,
        workers,
    )?;
    let mut flat = adjoint::parameter_gradient(
        theta,
        &model.grid,
        &model.waves,
        model.amplitude,
        &g_planes,
    )?;
    for (g, &keep) in flat.iter_mut().zip(&theta.trainable_mask) {
        if !keep {
            *g = 0.0;
        }
    }
    for (i, g) in flat.iter().enumerate() {
        if !g.is_finite() {
            return Err(SpdcError::Gradient {
                index: i,
                name: theta.scalar_name(i),
            });
        }
    }
    Ok((head.loss, flat))
}

/// Smallest waist the optimizer may propose on this grid; anything below
/// would fail the sampling check inside mode synthesis.
fn min_trainable_waist(grid: &SimGrid) -> f64 {
    (MIN_POINTS_PER_WAIST + 0.01) * grid.dx.max(grid.dy)
}

/// Runs Adam for `state.optim.epochs` epochs. The callback fires after
/// every parameter update (checkpointing hook); the loss history gets one
/// entry per epoch, evaluated before that epoch's update. Aborts with
/// `Diverged` when a later epoch's loss exceeds the configured multiple of
/// the first epoch's loss.
pub fn train(
    state: &mut TrainState,
    target: &TargetSpec,
    model: &ForwardModel,
    workers: usize,
    mut on_epoch: impl FnMut(&TrainState) -> Result<()>,
) -> Result<()> {
    state.theta.validate()?;
    state.optim.validate()?;
    let n = state.theta.n_scalars();
    if state.adam_m.len() != n || state.adam_v.len() != n {
        return Err(SpdcError::shape(
            "optimizer moments",
            format!("{n} scalars"),
            format!("{} / {}", state.adam_m.len(), state.adam_v.len()),
        ));
    }
    let waist_idx = state.theta.waist_indices();
    let mut is_waist = vec![false; n];
    for i in waist_idx {
        is_waist[i] = true;
    }
    let min_waist = min_trainable_waist(&model.grid);
    let total = state.optim.epochs.max(1) as f64;
    let mut initial = f64::NAN;
    for epoch in 0..state.optim.epochs {
        let (loss, grad) = loss_and_grad(&state.theta, target, model, workers)?;
        if epoch == 0 {
            initial = loss;
        }
        state.loss_history.push(loss);
        // epoch 0 only establishes the baseline; comparing it to itself
        // would make any factor below 1 abort instantly
        if epoch > 0 && loss > state.optim.divergence_factor * initial {
            return Err(SpdcError::Diverged {
                epoch: state.iteration,
                loss,
                initial,
                factor: state.optim.divergence_factor,
            });
        }
        let t = (state.iteration + 1) as f64;
        let decay = if state.optim.cosine_decay {
            let progress = (state.iteration as f64 / total).min(1.0);
            0.05 + 0.95 * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
        } else {
            1.0
        };
        let bias1 = 1.0 - state.optim.beta1.powf(t);
        let bias2 = 1.0 - state.optim.beta2.powf(t);
        let mut flat = state.theta.flatten();
        for i in 0..n {
            if !state.theta.trainable_mask[i] {
                continue;
            }
            let g = grad[i];
            state.adam_m[i] = state.optim.beta1 * state.adam_m[i]
                + (1.0 - state.optim.beta1) * g;
            state.adam_v[i] =
                state.optim.beta2 * state.adam_v[i] + (1.0 - state.optim.beta2) * g * g;
            let m_hat = state.adam_m[i] / bias1;
            let v_hat = state.adam_v[i] / bias2;
            let lr = decay
                * if is_waist[i] {
                    state.optim.lr_waist
                } else {
                    state.optim.lr_coeff
                };
            flat[i] -= lr * m_hat / (v_hat.sqrt() + state.optim.eps);
            if is_waist[i] && flat[i] < min_waist {
                flat[i] = min_waist;
            }
        }
        state.theta.set_from_flat(&flat)?;
        state.iteration += 1;
        on_epoch(state)?;
    }
    Ok(())
}

/// Pump replacement used at inference time to probe a trained crystal
/// with a different drive.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PumpOverride {
    pub basis: ModeSet,
    pub coeffs: Vec<C64>,
    pub waists: Vec<f64>,
}

/// New parameter vector with the pump expansion swapped out and every
/// group frozen; the crystal side is carried over unchanged.
pub fn apply_pump_override(theta: &ParamVector, ov: &PumpOverride) -> Result<ParamVector> {
    ParamVector::new(
        ov.basis.clone(),
        ov.coeffs.clone(),
        ov.waists.clone(),
        theta.crystal_basis.clone(),
        theta.crystal_coeffs.clone(),
        theta.crystal_waists.clone(),
        TrainGroups {
            pump_coeffs: false,
            pump_waists: false,
            crystal_coeffs: false,
            crystal_waists: false,
        },
    )
}

/// Request for a tomographic reconstruction alongside the coincidence
/// matrix.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DensityRequest {
    pub dim: usize,
    pub comp_modes: Vec<usize>,
}

/// Observables produced by one inference run.
#[derive(Debug, Clone)]
pub struct InferenceReport {
    pub g2: CoincidenceMatrix,
    pub corr: CorrelationData,
    pub rho: Option<DensityMatrix>,
}

/// Forward evaluation of a (possibly pump-overridden) design: coincidence
/// matrix, raw moments, and optionally a reconstructed density matrix.
pub fn infer(
    theta: &ParamVector,
    model: &ForwardModel,
    override_pump: Option<&PumpOverride>,
    density: Option<&DensityRequest>,
    workers: usize,
) -> Result<InferenceReport> {
    model.validate()?;
    let theta_eval = match override_pump {
        Some(ov) => apply_pump_override(theta, ov)?,
        None => theta.clone(),
    };
    let samples = sample_mode_amplitudes(
        &theta_eval,
        model.amplitude,
        &model.waves,
        &model.grid,
        &model.noise,
        &model.detection,
        workers,
    )?;
    let corr = first_order_moments(&samples)?;
    let g2m = g2(&corr, model.detection.post_select)?;
    let rho = match density {
        Some(req) => {
            let plan = measurement_plan(req.dim)?;
            let records = simulate_projections(&plan, &corr, &req.comp_modes)?;
            Some(reconstruct_rho(&records, req.dim)?)
        }
        None => None,
    };
    Ok(InferenceReport {
        g2: g2m,
        corr,
        rho,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{build_grid, wave_params, Poling};
    use crate::modes::{ModeSpec, PostSelect};
    use crate::tomography::pure_state_density;

    const KDP: f64 = 0.0;

    fn fd_model(n_real: usize) -> ForwardModel {
        let grid = build_grid(32, 32, 3.5e-6, 3.5e-6, 5.0e-5, 1.0e-3).unwrap();
        let waves =
            wave_params(405e-9, 810e-9, 810e-9, 1.692, 1.661, 1.661, 3.6e-12, Poling::AutoQpm).unwrap();
        let detection = ModeSet::new(
            vec![
                ModeSpec::lg(-1, 0, 22e-6, 5.0e-4),
                ModeSpec::lg(0, 0, 22e-6, 5.0e-4),
                ModeSpec::lg(1, 0, 22e-6, 5.0e-4),
            ],
            PostSelect::None,
        )
        .unwrap();
        ForwardModel {
            grid,
            waves,
            noise: NoiseSpec {
                n_realizations: n_real,
                master_seed: 23,
                noise_std: 1.0,
            },
            amplitude: 0.05,
            detection,
        }
    }

    fn fd_theta() -> ParamVector {
        let pump_basis = ModeSet::new(
            vec![
                ModeSpec::lg(0, 0, 40e-6, KDP),
                ModeSpec::lg(1, 0, 40e-6, KDP),
            ],
            PostSelect::None,
        )
        .unwrap();
        let crystal_basis =
            ModeSet::new(vec![ModeSpec::lg(0, 0, 60e-6, KDP)], PostSelect::None).unwrap();
        ParamVector::new(
            pump_basis,
            vec![C64::new(1.0, 0.0), C64::new(0.3, 0.2)],
            vec![40e-6, 40e-6],
            crystal_basis,
            vec![C64::new(1.0, -0.1)],
            vec![60e-6],
            TrainGroups {
                pump_coeffs: true,
                pump_waists: true,
                crystal_coeffs: true,
                crystal_waists: true,
            },
        )
        .unwrap()
    }

    fn tilted_target(theta: &ParamVector, model: &ForwardModel) -> CoincidenceMatrix {
        let report = infer(theta, model, None, None, 1).unwrap();
        let mut t = report.g2;
        let k = t.values.len();
        for (i, v) in t.values.iter_mut().enumerate() {
            *v = (*v + if i % 4 == 0 { 0.05 } else { 0.0 }) / (1.0 + 0.05 * (k as f64 / 4.0).ceil());
        }
        let total: f64 = t.values.iter().sum();
        for v in &mut t.values {
            *v /= total;
        }
        t
    }

    fn check_fd(theta: &ParamVector, target: &TargetSpec, model: &ForwardModel) {
        let (_, grad) = loss_and_grad(theta, target, model, 1).unwrap();
        let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        assert!(norm > 0.0, "gradient is identically zero");
        let waists = theta.waist_indices();
        for i in 0..grad.len() {
            if grad[i].abs() <= 1e-8 * norm {
                continue;
            }
            let flat = theta.flatten();
            let h = if waists.contains(&i) {
                flat[i] * 3e-4
            } else {
                1e-5 * flat[i].abs().max(0.1)
            };
            let mut plus = theta.clone();
            let mut minus = theta.clone();
            let mut fp = flat.clone();
            fp[i] += h;
            plus.set_from_flat(&fp).unwrap();
            let mut fm = flat.clone();
            fm[i] -= h;
            minus.set_from_flat(&fm).unwrap();
            let lp = loss_value(&plus, target, model, 1).unwrap();
            let lm = loss_value(&minus, target, model, 1).unwrap();
            let fd = (lp - lm) / (2.0 * h);
            let rel = (grad[i] - fd).abs() / fd.abs().max(grad[i].abs());
            assert!(
                rel < 1e-4,
                "coord {} ({}): adjoint {:.9e} vs fd {:.9e} rel {:.2e}",
                i,
                theta.scalar_name(i),
                grad[i],
                fd,
                rel
            );
        }
    }

    #[test]
    fn gradient_matches_finite_differences_coincidence() {
        let model = fd_model(6);
        let theta = fd_theta();
        let target = TargetSpec::coincidence(tilted_target(&theta, &model), 1.0, 0.5);
        check_fd(&theta, &target, &model);
    }

    #[test]
    fn gradient_matches_finite_differences_density() {
        let model = fd_model(6);
        let theta = fd_theta();
        // Bell target over the l = -1 and l = +1 detection modes
        let s = 2.0f64.sqrt().recip();
        let psi = vec![
            C64::new(0.0, 0.0),
            C64::new(s, 0.0),
            C64::new(s, 0.0),
            C64::new(0.0, 0.0),
        ];
        let rho = pure_state_density(&psi).unwrap();
        let target = TargetSpec::density(rho, 2, vec![0, 2], 1.0);
        check_fd(&theta, &target, &model);
    }

    #[test]
    fn gradient_is_zero_at_the_exact_target() {
        let model = fd_model(4);
        let theta = fd_theta();
        let observed = infer(&theta, &model, None, None, 1).unwrap().g2;
        let target = TargetSpec::coincidence(observed, 1.0, 1.0);
        let (loss, grad) = loss_and_grad(&theta, &target, &model, 1).unwrap();
        assert!(loss.abs() < 1e-12);
        let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        assert!(norm < 1e-8, "stationary gradient norm {norm}");
    }

    #[test]
    fn masked_scalars_get_exactly_zero_gradient() {
        let model = fd_model(4);
        let mut theta = fd_theta();
        theta.trainable_mask = theta.mask_from_groups(TrainGroups {
            pump_coeffs: true,
            pump_waists: false,
            crystal_coeffs: false,
            crystal_waists: false,
        });
        let target = TargetSpec::coincidence(tilted_target(&theta, &model), 1.0, 0.0);
        let (_, grad) = loss_and_grad(&theta, &target, &model, 1).unwrap();
        let np = theta.pump_coeffs.len();
        for (i, g) in grad.iter().enumerate() {
            if i < 2 * np {
                assert!(g.abs() > 0.0, "trainable coord {i} has zero gradient");
            } else {
                assert_eq!(*g, 0.0, "masked coord {i} leaked gradient {g}");
            }
        }
    }

    #[test]
    fn gradient_is_bitwise_deterministic_across_worker_counts() {
        let model = fd_model(10);
        let theta = fd_theta();
        let target = TargetSpec::coincidence(tilted_target(&theta, &model), 1.0, 0.5);
        let (l1, g1) = loss_and_grad(&theta, &target, &model, 1).unwrap();
        let (l3, g3) = loss_and_grad(&theta, &target, &model, 3).unwrap();
        assert_eq!(l1.to_bits(), l3.to_bits());
        for (a, b) in g1.iter().zip(&g3) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn adam_reduces_the_loss_on_a_small_problem() {
        let model = fd_model(6);
        let theta = fd_theta();
        let target = TargetSpec::coincidence(tilted_target(&theta, &model), 1.0, 0.5);
        let mut state = TrainState::new(
            theta,
            OptimSettings {
                epochs: 8,
                ..OptimSettings::default()
            },
            model.noise.master_seed,
        )
        .unwrap();
        train(&mut state, &target, &model, 2, |_| Ok(())).unwrap();
        assert_eq!(state.loss_history.len(), 8);
        assert_eq!(state.iteration, 8);
        let first = state.loss_history[0];
        let last = *state.loss_history.last().unwrap();
        assert!(
            last < first,
            "loss did not improve: {first} -> {last} ({:?})",
            state.loss_history
        );
    }

    #[test]
    fn zero_epochs_leaves_everything_unchanged() {
        let model = fd_model(4);
        let theta = fd_theta();
        let target = TargetSpec::coincidence(tilted_target(&theta, &model), 1.0, 0.0);
        let mut state = TrainState::new(
            theta.clone(),
            OptimSettings {
                epochs: 0,
                ..OptimSettings::default()
            },
            7,
        )
        .unwrap();
        train(&mut state, &target, &model, 1, |_| Ok(())).unwrap();
        assert_eq!(state.theta, theta);
        assert!(state.loss_history.is_empty());
        assert_eq!(state.iteration, 0);
    }

    #[test]
    fn non_improving_run_trips_the_divergence_guard() {
        let model = fd_model(4);
        let theta = fd_theta();
        let target = TargetSpec::coincidence(tilted_target(&theta, &model), 1.0, 0.0);
        // a factor below one turns any non-improving epoch into an abort,
        // and a zero learning rate guarantees no improvement
        let mut state = TrainState::new(
            theta,
            OptimSettings {
                epochs: 3,
                lr_coeff: 0.0,
                lr_waist: 0.0,
                divergence_factor: 0.9,
                ..OptimSettings::default()
            },
            7,
        )
        .unwrap();
        let err = train(&mut state, &target, &model, 1, |_| Ok(())).unwrap_err();
        match err {
            SpdcError::Diverged { epoch, .. } => assert_eq!(epoch, 1),
            other => panic!("expected Diverged, got {other}"),
        }
    }

    #[test]
    fn pump_override_swaps_the_drive() {
        let model = fd_model(6);
        let theta = fd_theta();
        let base = infer(&theta, &model, None, None, 1).unwrap();
        let ov = PumpOverride {
            basis: ModeSet::new(vec![ModeSpec::lg(1, 0, 40e-6, KDP)], PostSelect::None).unwrap(),
            coeffs: vec![C64::new(1.0, 0.0)],
            waists: vec![40e-6],
        };
        let swapped = infer(&theta, &model, Some(&ov), None, 1).unwrap();
        let shift = base.g2.l1_distance(&swapped.g2);
        assert!(shift > 0.05, "override barely moved the output: {shift}");
    }

    #[test]
    fn init_theta_is_seeded_and_anchored_on_the_fundamental() {
        let basis = || {
            ModeSet::new(
                vec![
                    ModeSpec::lg(-1, 0, 40e-6, 0.0),
                    ModeSpec::lg(0, 0, 40e-6, 0.0),
                    ModeSpec::lg(1, 0, 40e-6, 0.0),
                ],
                PostSelect::None,
            )
            .unwrap()
        };
        let groups = TrainGroups {
            pump_coeffs: true,
            pump_waists: false,
            crystal_coeffs: true,
            crystal_waists: false,
        };
        let a = init_theta(basis(), basis(), groups, 5).unwrap();
        let b = init_theta(basis(), basis(), groups, 5).unwrap();
        let c = init_theta(basis(), basis(), groups, 6).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.pump_coeffs, c.pump_coeffs);
        // fundamental is the l = 0 entry at index 1
        assert!((a.pump_coeffs[1] - C64::new(1.0, 0.0)).norm() < 0.5);
        assert!(a.pump_coeffs[0].norm() < 0.5);
        assert_eq!(a.pump_waists, vec![40e-6; 3]);
    }

    #[test]
    fn density_inference_reports_a_physical_matrix() {
        let model = fd_model(8);
        let theta = fd_theta();
        let req = DensityRequest {
            dim: 2,
            comp_modes: vec![0, 2],
        };
        let report = infer(&theta, &model, None, Some(&req), 1).unwrap();
        let rho = report.rho.unwrap();
        rho.validate().unwrap();
    }
}
