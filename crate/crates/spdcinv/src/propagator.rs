//! Coupled split-step propagation of vacuum-seeded field quartets.
//!
//! Each realization carries four envelopes (idler out/vac, signal out/vac).
//! One split step is Strang-composed: linear half step in the spectral
//! domain, nonlinear full step, linear half step. Over a whole crystal the
//! interior half steps fuse into full steps, so nz steps cost one half,
//! nz-1 full, one half linear stages plus nz nonlinear stages.
//!
//! The nonlinear stage integrates the pointwise coupling
//!
//!   dE_i_out/dz = -i kappa_i e^{-i delta_k z} conj(E_s_vac)
//!   dE_i_vac/dz = -i kappa_i e^{-i delta_k z} conj(E_s_out)
//!
//! (and the two signal equations with i and s swapped) with an explicit
//! trapezoid (Heun) rule, keeping the whole scheme second order in dz. The
//! coupling itself varies along the crystal because the pump diffracts, so
//! a propagation consumes one coupling pair per stage plane; each Heun
//! stage reads the entry plane for its first slope and the exit plane for
//! its second.
//!
//! Determinism contract: given (theta, seeds, grid), every output field is
//! bit-identical regardless of worker count, because realizations are
//! independent and noise is counter-keyed per realization.

use crate::error::SpdcError;
use crate::fft::Fft2;
use crate::grid::{transverse_propagator_phase, Field2D, SimGrid, WaveParams};
use crate::medium::{coupling_kappa, synth_crystal, synth_pump, DownWave, ParamVector};
use crate::pool::run_chunked;
use crate::rng::{gaussian_field, NoiseLane, StreamKey};
use crate::Result;
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

/// The four coupled envelopes of one noise realization.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldQuartet {
    pub e_i_out: Field2D,
    pub e_i_vac: Field2D,
    pub e_s_out: Field2D,
    pub e_s_vac: Field2D,
}

impl FieldQuartet {
    pub fn zeros(grid: &SimGrid) -> Self {
        FieldQuartet {
            e_i_out: Field2D::zeros(grid),
            e_i_vac: Field2D::zeros(grid),
            e_s_out: Field2D::zeros(grid),
            e_s_vac: Field2D::zeros(grid),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.e_i_out.is_finite()
            && self.e_i_vac.is_finite()
            && self.e_s_out.is_finite()
            && self.e_s_vac.is_finite()
    }

    /// Relabels signal as idler and vice versa (degeneracy symmetry tool).
    pub fn swap_labels(self) -> Self {
        FieldQuartet {
            e_i_out: self.e_s_out,
            e_i_vac: self.e_s_vac,
            e_s_out: self.e_i_out,
            e_s_vac: self.e_i_vac,
        }
    }
}

/// Vacuum ensemble description.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub n_realizations: usize,
    pub master_seed: u64,
    /// Gaussian std per quadrature per cell; relative units.
    pub noise_std: f64,
}

impl NoiseSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_realizations < 1 {
            return Err(SpdcError::config(
                "noise.n_realizations",
                "must be >= 1",
            ));
        }
        if !(self.noise_std > 0.0) || !self.noise_std.is_finite() {
            return Err(SpdcError::config(
                "noise.noise_std",
                format!("must be positive and finite, got {}", self.noise_std),
            ));
        }
        Ok(())
    }

    /// Normally ordered per-mode vacuum variance constant: projecting a
    /// noise field onto a unit-norm mode gives a complex amplitude of
    /// variance 2 std^2 dA.
    pub fn mode_variance(&self, grid: &SimGrid) -> f64 {
        2.0 * self.noise_std * self.noise_std * grid.cell_area()
    }
}

/// Vacuum state of realization `r`: out fields zero, vac fields drawn from
/// the counter-keyed streams.
pub fn init_vacuum_one(noise: &NoiseSpec, r: u64, grid: &SimGrid) -> FieldQuartet {
    let ik = StreamKey {
        master_seed: noise.master_seed,
        realization: r,
        lane: NoiseLane::IdlerVacuum,
    };
    let sk = StreamKey {
        master_seed: noise.master_seed,
        realization: r,
        lane: NoiseLane::SignalVacuum,
    };
    FieldQuartet {
        e_i_out: Field2D::zeros(grid),
        e_i_vac: gaussian_field(ik, grid, noise.noise_std),
        e_s_out: Field2D::zeros(grid),
        e_s_vac: gaussian_field(sk, grid, noise.noise_std),
    }
}

/// Full ensemble initialization (materializes every quartet).
pub fn init_vacuum(noise: &NoiseSpec, grid: &SimGrid) -> Result<Vec<FieldQuartet>> {
    noise.validate()?;
    Ok((0..noise.n_realizations as u64)
        .map(|r| init_vacuum_one(noise, r, grid))
        .collect())
}

/// Precomputed spectral phases and FFT plans for one (grid, waves) pair.
/// Clone one per worker; plans are shared, scratch is per-instance.
#[derive(Clone)]
pub struct StepContext {
    pub grid: SimGrid,
    pub waves: WaveParams,
    fft: Fft2,
    half_i: Vec<C64>,
    half_s: Vec<C64>,
    full_i: Vec<C64>,
    full_s: Vec<C64>,
}

impl StepContext {
    pub fn new(grid: &SimGrid, waves: &WaveParams) -> Self {
        let dz = grid.dz;
        StepContext {
            grid: grid.clone(),
            waves: waves.clone(),
            fft: Fft2::new(grid.nx, grid.ny),
            half_i: transverse_propagator_phase(grid, waves.k_i, dz / 2.0),
            half_s: transverse_propagator_phase(grid, waves.k_s, dz / 2.0),
            full_i: transverse_propagator_phase(grid, waves.k_i, dz),
            full_s: transverse_propagator_phase(grid, waves.k_s, dz),
        }
    }

    fn apply_linear_one(fft: &mut Fft2, field: &mut Field2D, phase: &[C64]) {
        fft.forward(&mut field.data);
        for (v, p) in field.data.iter_mut().zip(phase) {
            *v *= p;
        }
        fft.inverse(&mut field.data);
    }

    /// Diffraction stage applied to all four fields; `half` selects the
    /// half-step or full-step phase tables.
    fn apply_linear(&mut self, q: &mut FieldQuartet, half: bool) {
        let (pi, ps) = if half {
            (&self.half_i, &self.half_s)
        } else {
            (&self.full_i, &self.full_s)
        };
        Self::apply_linear_one(&mut self.fft, &mut q.e_i_out, pi);
        Self::apply_linear_one(&mut self.fft, &mut q.e_i_vac, pi);
        Self::apply_linear_one(&mut self.fft, &mut q.e_s_out, ps);
        Self::apply_linear_one(&mut self.fft, &mut q.e_s_vac, ps);
    }

    /// Heun (explicit trapezoid) integration of the pointwise coupling over
    /// [zeta, zeta + dz]. The two stages see the coupling at their own
    /// planes: `ka` at zeta, `kb` at zeta + dz (the pump diffracts, so the
    /// coupling is a different field at every plane).
    fn nonlinear_stage(
        &self,
        q: &mut FieldQuartet,
        ka: &CouplingPair,
        kb: &CouplingPair,
        zeta: f64,
    ) {
        let dz = self.grid.dz;
        let dk = self.waves.delta_k;
        let minus_i = C64::new(0.0, -1.0);
        let phi_a = minus_i * C64::new(0.0, -dk * zeta).exp();
        let phi_b = minus_i * C64::new(0.0, -dk * (zeta + dz)).exp();
        let half_dz = 0.5 * dz;
        for c in 0..q.e_i_out.data.len() {
            let io = q.e_i_out.data[c];
            let iv = q.e_i_vac.data[c];
            let so = q.e_s_out.data[c];
            let sv = q.e_s_vac.data[c];

            let cia = phi_a * ka.kappa_i.data[c];
            let csa = phi_a * ka.kappa_s.data[c];
            let a_io = cia * sv.conj();
            let a_iv = cia * so.conj();
            let a_so = csa * iv.conj();
            let a_sv = csa * io.conj();

            let io1 = io + dz * a_io;
            let iv1 = iv + dz * a_iv;
            let so1 = so + dz * a_so;
            let sv1 = sv + dz * a_sv;

            let cib = phi_b * kb.kappa_i.data[c];
            let csb = phi_b * kb.kappa_s.data[c];
            let b_io = cib * sv1.conj();
            let b_iv = cib * so1.conj();
            let b_so = csb * iv1.conj();
            let b_sv = csb * io1.conj();

            q.e_i_out.data[c] = io + half_dz * (a_io + b_io);
            q.e_i_vac.data[c] = iv + half_dz * (a_iv + b_iv);
            q.e_s_out.data[c] = so + half_dz * (a_so + b_so);
            q.e_s_vac.data[c] = sv + half_dz * (a_sv + b_sv);
        }
    }

    fn apply_linear_adjoint_one(fft: &mut Fft2, field: &mut Field2D, phase: &[C64]) {
        fft.forward(&mut field.data);
        for (v, p) in field.data.iter_mut().zip(phase) {
            *v *= p.conj();
        }
        fft.inverse(&mut field.data);
    }

    /// Adjoint of the diffraction stage: the same spectral sandwich with
    /// conjugated phase tables (the forward/inverse FFT scale factors cancel
    /// against each other in the adjoint).
    fn apply_linear_adjoint(&mut self, q: &mut FieldQuartet, half: bool) {
        let (pi, ps) = if half {
            (&self.half_i, &self.half_s)
        } else {
            (&self.full_i, &self.full_s)
        };
        Self::apply_linear_adjoint_one(&mut self.fft, &mut q.e_i_out, pi);
        Self::apply_linear_adjoint_one(&mut self.fft, &mut q.e_i_vac, pi);
        Self::apply_linear_adjoint_one(&mut self.fft, &mut q.e_s_out, ps);
        Self::apply_linear_adjoint_one(&mut self.fft, &mut q.e_s_vac, ps);
    }

    /// Reverse-mode sweep through one Heun coupling stage. `cot` carries
    /// d(loss)/d(conj field) for the stage outputs on entry and for the
    /// stage inputs on exit; `saved` is the taped pre-stage quartet the
    /// intermediates are recomputed from. Coupling cotangents accumulate
    /// per plane: stage a terms into `g_a`, stage b terms into `g_b`.
    fn nonlinear_stage_adjoint(
        &self,
        cot: &mut FieldQuartet,
        saved: &FieldQuartet,
        ka: &CouplingPair,
        kb: &CouplingPair,
        zeta: f64,
        g_a: &mut CouplingPair,
        g_b: &mut CouplingPair,
    ) {
        let dz = self.grid.dz;
        let dk = self.waves.delta_k;
        let minus_i = C64::new(0.0, -1.0);
        let phi_a = minus_i * C64::new(0.0, -dk * zeta).exp();
        let phi_b = minus_i * C64::new(0.0, -dk * (zeta + dz)).exp();
        let half_dz = 0.5 * dz;
        for c in 0..cot.e_i_out.data.len() {
            let io = saved.e_i_out.data[c];
            let iv = saved.e_i_vac.data[c];
            let so = saved.e_s_out.data[c];
            let sv = saved.e_s_vac.data[c];

            let cia = phi_a * ka.kappa_i.data[c];
            let csa = phi_a * ka.kappa_s.data[c];
            let a_io = cia * sv.conj();
            let a_iv = cia * so.conj();
            let a_so = csa * iv.conj();
            let a_sv = csa * io.conj();

            let io1 = io + dz * a_io;
            let iv1 = iv + dz * a_iv;
            let so1 = so + dz * a_so;
            let sv1 = sv + dz * a_sv;

            let cib = phi_b * kb.kappa_i.data[c];
            let csb = phi_b * kb.kappa_s.data[c];

            let g_io = cot.e_i_out.data[c];
            let g_iv = cot.e_i_vac.data[c];
            let g_so = cot.e_s_out.data[c];
            let g_sv = cot.e_s_vac.data[c];

            let gb_io = half_dz * g_io;
            let gb_iv = half_dz * g_iv;
            let gb_so = half_dz * g_so;
            let gb_sv = half_dz * g_sv;

            let g_sv1 = cib * gb_io.conj();
            let g_so1 = cib * gb_iv.conj();
            let g_iv1 = csb * gb_so.conj();
            let g_io1 = csb * gb_sv.conj();

            let g_cib = gb_io * sv1 + gb_iv * so1;
            let g_csb = gb_so * iv1 + gb_sv * io1;

            let ga_io = half_dz * g_io + dz * g_io1;
            let ga_iv = half_dz * g_iv + dz * g_iv1;
            let ga_so = half_dz * g_so + dz * g_so1;
            let ga_sv = half_dz * g_sv + dz * g_sv1;

            let g_cia = ga_io * sv + ga_iv * so;
            let g_csa = ga_so * iv + ga_sv * io;

            cot.e_i_out.data[c] = g_io + g_io1 + csa * ga_sv.conj();
            cot.e_i_vac.data[c] = g_iv + g_iv1 + csa * ga_so.conj();
            cot.e_s_out.data[c] = g_so + g_so1 + cia * ga_iv.conj();
            cot.e_s_vac.data[c] = g_sv + g_sv1 + cia * ga_io.conj();

            g_a.kappa_i.data[c] += phi_a.conj() * g_cia;
            g_a.kappa_s.data[c] += phi_a.conj() * g_csa;
            g_b.kappa_i.data[c] += phi_b.conj() * g_cib;
            g_b.kappa_s.data[c] += phi_b.conj() * g_csb;
        }
    }

    /// Reverse sweep over a whole propagation recorded by `propagate_impl`.
    /// `cot` enters as the cotangent of the output fields and leaves as the
    /// cotangent just after the input half step; the adjoint of the very
    /// first half step is skipped because nothing consumes cotangents of
    /// the vacuum seed. Coupling cotangents accumulate into `g`, one pair
    /// per plane (same length as `profile.planes`).
    pub(crate) fn propagate_adjoint(
        &mut self,
        cot: &mut FieldQuartet,
        tape: &[FieldQuartet],
        profile: &CouplingProfile,
        g: &mut [CouplingPair],
    ) {
        debug_assert_eq!(tape.len(), self.grid.nz);
        debug_assert_eq!(profile.planes.len(), self.grid.nz + 1);
        debug_assert_eq!(g.len(), self.grid.nz + 1);
        let dz = self.grid.dz;
        self.apply_linear_adjoint(cot, true);
        for step in (0..tape.len()).rev() {
            let (head, tail) = g.split_at_mut(step + 1);
            self.nonlinear_stage_adjoint(
                cot,
                &tape[step],
                &profile.planes[step],
                &profile.planes[step + 1],
                step as f64 * dz,
                &mut head[step],
                &mut tail[0],
            );
            if step > 0 {
                self.apply_linear_adjoint(cot, false);
            }
        }
    }

    fn check_finite(&self, q: &FieldQuartet, step: usize) -> Result<()> {
        if q.is_finite() {
            Ok(())
        } else {
            Err(SpdcError::Numerical {
                step,
                reason: "non-finite field values after split step".into(),
            })
        }
    }

    /// One standalone Strang step (half linear, nonlinear, half linear)
    /// starting at longitudinal position `zeta` = step_index * dz. `ka` and
    /// `kb` are the couplings at the entry and exit planes of the step.
    pub fn ssf_step(
        &mut self,
        q: &mut FieldQuartet,
        ka: &CouplingPair,
        kb: &CouplingPair,
        step_index: usize,
    ) -> Result<()> {
        let zeta = step_index as f64 * self.grid.dz;
        self.apply_linear(q, true);
        self.nonlinear_stage(q, ka, kb, zeta);
        self.apply_linear(q, true);
        self.check_finite(q, step_index)
    }

    /// Whole-crystal propagation with interior half steps fused. `tape`, if
    /// provided, receives a clone of the quartet entering every nonlinear
    /// stage (the state the adjoint sweep recomputes against).
    pub fn propagate_impl(
        &mut self,
        q: &mut FieldQuartet,
        profile: &CouplingProfile,
        mut tape: Option<&mut Vec<FieldQuartet>>,
    ) -> Result<()> {
        let nz = self.grid.nz;
        let dz = self.grid.dz;
        if profile.planes.len() != nz + 1 {
            return Err(SpdcError::shape(
                "coupling profile",
                format!("{} planes (nz + 1)", nz + 1),
                format!("{} planes", profile.planes.len()),
            ));
        }
        self.apply_linear(q, true);
        for step in 0..nz {
            if step > 0 {
                self.apply_linear(q, false);
            }
            if let Some(t) = tape.as_deref_mut() {
                t.push(q.clone());
            }
            self.nonlinear_stage(
                q,
                &profile.planes[step],
                &profile.planes[step + 1],
                step as f64 * dz,
            );
            self.check_finite(q, step)?;
        }
        self.apply_linear(q, true);
        self.check_finite(q, nz)
    }

    /// Propagates one realization from the input facet to zeta = L.
    pub fn propagate(&mut self, q: &mut FieldQuartet, profile: &CouplingProfile) -> Result<()> {
        self.propagate_impl(q, profile, None)
    }
}

/// Signal and idler coupling fields at one longitudinal plane.
#[derive(Debug, Clone)]
pub struct CouplingPair {
    pub kappa_i: Field2D,
    pub kappa_s: Field2D,
}

impl CouplingPair {
    pub fn zeros(grid: &SimGrid) -> Self {
        CouplingPair {
            kappa_i: Field2D::zeros(grid),
            kappa_s: Field2D::zeros(grid),
        }
    }
}

/// Coupling sampled at the nz + 1 stage planes zeta = j dz. The crystal
/// hologram is z-invariant but the pump diffracts, so each plane holds a
/// different product field; the Heun stage over [j dz, (j+1) dz] reads
/// planes j and j + 1.
pub struct CouplingProfile {
    pub planes: Vec<CouplingPair>,
}

impl CouplingProfile {
    /// Replicates one pair across all planes (z-invariant coupling, mostly
    /// for tests and analytic references).
    pub fn uniform(pair: CouplingPair, nz: usize) -> Self {
        CouplingProfile {
            planes: vec![pair; nz + 1],
        }
    }
}

/// Builds the coupling at every stage plane from the parameter vector. The
/// pump envelope is synthesized analytically per plane; the crystal
/// hologram once.
pub fn couplings_from_theta(
    theta: &ParamVector,
    amplitude: f64,
    waves: &WaveParams,
    grid: &SimGrid,
) -> Result<CouplingProfile> {
    let crystal = synth_crystal(theta, grid, waves)?;
    let mut planes = Vec::with_capacity(grid.nz + 1);
    for j in 0..=grid.nz {
        let pump = synth_pump(theta, grid, waves, amplitude, j as f64 * grid.dz)?;
        planes.push(CouplingPair {
            kappa_i: coupling_kappa(&pump, &crystal, waves, DownWave::Idler)?,
            kappa_s: coupling_kappa(&pump, &crystal, waves, DownWave::Signal)?,
        });
    }
    Ok(CouplingProfile { planes })
}

/// Propagates the whole ensemble and returns the output quartets indexed by
/// realization. Work is chunked over a deterministic pool; per-realization
/// results do not depend on worker count.
pub fn propagate_ensemble(
    theta: &ParamVector,
    amplitude: f64,
    waves: &WaveParams,
    grid: &SimGrid,
    noise: &NoiseSpec,
    workers: usize,
) -> Result<Vec<FieldQuartet>> {
    noise.validate()?;
    let profile = couplings_from_theta(theta, amplitude, waves, grid)?;
    let proto = StepContext::new(grid, waves);
    let chunk_results: Vec<Result<Vec<FieldQuartet>>> = run_chunked(
        noise.n_realizations,
        workers,
        || proto.clone(),
        |ctx, range| {
            let mut out = Vec::with_capacity(range.len());
            for r in range {
                let mut q = init_vacuum_one(noise, r as u64, grid);
                ctx.propagate(&mut q, &profile)?;
                out.push(q);
            }
            Ok(out)
        },
    );
    let mut ensemble = Vec::with_capacity(noise.n_realizations);
    for chunk in chunk_results {
        ensemble.extend(chunk?);
    }
    Ok(ensemble)
}
