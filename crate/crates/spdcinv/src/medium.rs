//! Learnable pump and crystal parameterization, coupling synthesis,
//! imperfection injection and fabrication export.
//!
//! Both the pump envelope and the crystal hologram are linear expansions
//! over analytic mode bases, each basis function carrying its own learnable
//! waist. The pump diffracts through the crystal: every basis function is
//! an exact paraxial solution, so the envelope at any plane z is synthesized
//! analytically rather than numerically propagated. The crystal hologram is
//! a transverse pattern, z-independent by construction, evaluated at each
//! function's own waist plane; its longitudinal structure is the QPM
//! carrier, whose first Fourier harmonic (2/pi of the binary swing) is
//! folded into the coupling coefficient and whose residual mismatch lives
//! in `WaveParams::delta_k`.

use crate::error::SpdcError;
use crate::grid::{Field2D, SimGrid, WaveParams};
use crate::modes::{synth_mode, Basis, ModeSet, ModeSpec};
use crate::rng::{real_gaussian, NoiseLane, StreamKey};
use crate::Result;
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

/// Learnable degrees of freedom: complex coefficients and per-function
/// waists for the pump and crystal expansions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamVector {
    pub pump_coeffs: Vec<C64>,
    /// Per-basis-function pump waists, meters.
    pub pump_waists: Vec<f64>,
    pub crystal_coeffs: Vec<C64>,
    pub crystal_waists: Vec<f64>,
    pub pump_basis: ModeSet,
    pub crystal_basis: ModeSet,
    /// One flag per real scalar in flattened order; `false` freezes the
    /// scalar during optimization.
    pub trainable_mask: Vec<bool>,
}

/// Which parameter groups an optimizer may touch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainGroups {
    pub pump_coeffs: bool,
    pub pump_waists: bool,
    pub crystal_coeffs: bool,
    pub crystal_waists: bool,
}

impl ParamVector {
    pub fn new(
        pump_basis: ModeSet,
        pump_coeffs: Vec<C64>,
        pump_waists: Vec<f64>,
        crystal_basis: ModeSet,
        crystal_coeffs: Vec<C64>,
        crystal_waists: Vec<f64>,
        groups: TrainGroups,
    ) -> Result<Self> {
        let mut theta = ParamVector {
            pump_coeffs,
            pump_waists,
            crystal_coeffs,
            crystal_waists,
            pump_basis,
            crystal_basis,
            trainable_mask: Vec::new(),
        };
        theta.trainable_mask = theta.mask_from_groups(groups);
        theta.validate()?;
        Ok(theta)
    }

    pub fn validate(&self) -> Result<()> {
        self.pump_basis.validate()?;
        self.crystal_basis.validate()?;
        if self.pump_coeffs.len() != self.pump_basis.len()
            || self.pump_waists.len() != self.pump_basis.len()
        {
            return Err(SpdcError::shape(
                "pump parameter lists",
                format!("{} entries", self.pump_basis.len()),
                format!(
                    "{} coeffs / {} waists",
                    self.pump_coeffs.len(),
                    self.pump_waists.len()
                ),
            ));
        }
        if self.crystal_coeffs.len() != self.crystal_basis.len()
            || self.crystal_waists.len() != self.crystal_basis.len()
        {
            return Err(SpdcError::shape(
                "crystal parameter lists",
                format!("{} entries", self.crystal_basis.len()),
                format!(
                    "{} coeffs / {} waists",
                    self.crystal_coeffs.len(),
                    self.crystal_waists.len()
                ),
            ));
        }
        for (i, w) in self.pump_waists.iter().chain(&self.crystal_waists).enumerate() {
            if !(*w > 0.0) || !w.is_finite() {
                return Err(SpdcError::config(
                    "theta.waists",
                    format!("waist scalar {i} must be positive, got {w}"),
                ));
            }
        }
        if self.trainable_mask.len() != self.n_scalars() {
            return Err(SpdcError::shape(
                "trainable mask",
                format!("{} scalars", self.n_scalars()),
                format!("{}", self.trainable_mask.len()),
            ));
        }
        Ok(())
    }

    /// Real scalar count: (re, im) per coefficient plus one waist per basis
    /// function, pump first.
    pub fn n_scalars(&self) -> usize {
        3 * self.pump_basis.len() + 3 * self.crystal_basis.len()
    }

    /// Flattened order: pump coeff re/im interleaved, pump waists, crystal
    /// coeff re/im interleaved, crystal waists. Gradients and the optimizer
    /// use the same layout.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_scalars());
        for c in &self.pump_coeffs {
            out.push(c.re);
            out.push(c.im);
        }
        out.extend_from_slice(&self.pump_waists);
        for c in &self.crystal_coeffs {
            out.push(c.re);
            out.push(c.im);
        }
        out.extend_from_slice(&self.crystal_waists);
        out
    }

    pub fn set_from_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.n_scalars() {
            return Err(SpdcError::shape(
                "flattened parameters",
                format!("{}", self.n_scalars()),
                format!("{}", flat.len()),
            ));
        }
        let np = self.pump_coeffs.len();
        let nc = self.crystal_coeffs.len();
        let mut at = 0;
        for c in self.pump_coeffs.iter_mut() {
            *c = C64::new(flat[at], flat[at + 1]);
            at += 2;
        }
        self.pump_waists.copy_from_slice(&flat[at..at + np]);
        at += np;
        for c in self.crystal_coeffs.iter_mut() {
            *c = C64::new(flat[at], flat[at + 1]);
            at += 2;
        }
        self.crystal_waists.copy_from_slice(&flat[at..at + nc]);
        self.validate()
    }

    /// Name of a flattened scalar, for gradient diagnostics.
    pub fn scalar_name(&self, index: usize) -> String {
        let np = self.pump_coeffs.len();
        let nc = self.crystal_coeffs.len();
        let mut i = index;
        if i < 2 * np {
            let part = if i % 2 == 0 { "re" } else { "im" };
            return format!("pump_coeff[{}].{part}", i / 2);
        }
        i -= 2 * np;
        if i < np {
            return format!("pump_waist[{i}]");
        }
        i -= np;
        if i < 2 * nc {
            let part = if i % 2 == 0 { "re" } else { "im" };
            return format!("crystal_coeff[{}].{part}", i / 2);
        }
        i -= 2 * nc;
        format!("crystal_waist[{i}]")
    }

    /// Expands group flags to the per-scalar mask in flattened order.
    pub fn mask_from_groups(&self, groups: TrainGroups) -> Vec<bool> {
        let np = self.pump_basis.len();
        let nc = self.crystal_basis.len();
        let mut mask = Vec::with_capacity(self.n_scalars());
        mask.extend(std::iter::repeat(groups.pump_coeffs).take(2 * np));
        mask.extend(std::iter::repeat(groups.pump_waists).take(np));
        mask.extend(std::iter::repeat(groups.crystal_coeffs).take(2 * nc));
        mask.extend(std::iter::repeat(groups.crystal_waists).take(nc));
        mask
    }

    /// Index ranges of the waist scalars in flattened order, used by the
    /// optimizer to apply the waist-specific learning rate and positivity.
    pub fn waist_indices(&self) -> Vec<usize> {
        let np = self.pump_basis.len();
        let nc = self.crystal_basis.len();
        let mut idx: Vec<usize> = (2 * np..3 * np).collect();
        let base = 3 * np + 2 * nc;
        idx.extend(base..base + nc);
        idx
    }
}

/// Pump transverse envelope, including the configured amplitude scale.
#[derive(Debug, Clone, PartialEq)]
pub struct PumpProfile {
    pub envelope: Field2D,
    /// Relative amplitude that was multiplied in; kept for reporting.
    pub amplitude: f64,
}

/// Crystal hologram: complex transverse envelope modulating the QPM
/// carrier.
#[derive(Debug, Clone, PartialEq)]
pub struct CrystalHologram {
    pub transverse_envelope: Field2D,
    pub qpm_period: f64,
    pub d24: f64,
}

fn expand(
    basis: &ModeSet,
    coeffs: &[C64],
    waists: &[f64],
    grid: &SimGrid,
    k: f64,
    z: Option<f64>,
) -> Result<Field2D> {
    let mut out = Field2D::zeros(grid);
    for ((spec, coeff), waist) in basis.specs.iter().zip(coeffs).zip(waists) {
        let spec = ModeSpec {
            waist: *waist,
            ..*spec
        };
        // None evaluates at the function's own waist plane
        let plane = z.unwrap_or(spec.waist_plane_z);
        let mode = synth_mode(&spec, grid, k, plane)?;
        for (o, m) in out.data.iter_mut().zip(&mode.data) {
            *o += coeff * m;
        }
    }
    Ok(out)
}

/// Synthesizes the pump envelope at crystal plane `z`, scaled by
/// `amplitude` (relative units; this is the gain knob). Each basis function
/// diffracts analytically from its own waist plane.
pub fn synth_pump(
    theta: &ParamVector,
    grid: &SimGrid,
    waves: &WaveParams,
    amplitude: f64,
    z: f64,
) -> Result<PumpProfile> {
    theta.validate()?;
    let mut envelope = expand(
        &theta.pump_basis,
        &theta.pump_coeffs,
        &theta.pump_waists,
        grid,
        waves.k_p,
        Some(z),
    )?;
    envelope.scale(C64::new(amplitude, 0.0));
    Ok(PumpProfile {
        envelope,
        amplitude,
    })
}

/// Synthesizes the crystal hologram envelope from its expansion.
pub fn synth_crystal(
    theta: &ParamVector,
    grid: &SimGrid,
    waves: &WaveParams,
) -> Result<CrystalHologram> {
    theta.validate()?;
    let envelope = expand(
        &theta.crystal_basis,
        &theta.crystal_coeffs,
        &theta.crystal_waists,
        grid,
        waves.k_p,
        None,
    )?;
    Ok(CrystalHologram {
        transverse_envelope: envelope,
        qpm_period: waves.poling_period,
        d24: waves.d24,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DownWave {
    Signal,
    Idler,
}

/// Nonlinear coupling coefficient for the chosen down-converted wave:
/// kappa_j(r) = (omega_j^2 / (c^2 k_j)) * (2/pi) * d24 * env_chi(r) * env_p(r).
/// The 2/pi is the first Fourier harmonic of the binary poling; the QPM
/// carrier itself is folded into delta_k.
pub fn coupling_kappa(
    pump: &PumpProfile,
    crystal: &CrystalHologram,
    waves: &WaveParams,
    which: DownWave,
) -> Result<Field2D> {
    let p = &pump.envelope;
    let x = &crystal.transverse_envelope;
    if (p.nx, p.ny) != (x.nx, x.ny) {
        return Err(SpdcError::shape(
            "coupling_kappa",
            format!("{}x{}", p.nx, p.ny),
            format!("{}x{}", x.nx, x.ny),
        ));
    }
    let (omega, k) = match which {
        DownWave::Signal => (waves.omega_s, waves.k_s),
        DownWave::Idler => (waves.omega_i, waves.k_i),
    };
    let scale = omega * omega / (crate::grid::SPEED_OF_LIGHT.powi(2) * k)
        * (2.0 / std::f64::consts::PI)
        * crystal.d24;
    let mut kappa = p.clone();
    for (v, chi) in kappa.data.iter_mut().zip(&x.data) {
        *v *= chi * scale;
    }
    Ok(kappa)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PerturbMode {
    /// alpha -> alpha * (1 + delta), real delta ~ N(0, sigma^2).
    Multiplicative,
    /// alpha -> alpha + delta, complex delta with N(0, sigma^2) quadratures.
    Additive,
}

/// Returns a copy of theta with crystal coefficients perturbed by seeded
/// Gaussian fabrication noise. Pump parameters are untouched.
pub fn perturb_crystal(
    theta: &ParamVector,
    sigma: f64,
    mode: PerturbMode,
    seed: u64,
) -> Result<ParamVector> {
    if !(sigma >= 0.0) {
        return Err(SpdcError::config(
            "perturb.sigma",
            format!("must be >= 0, got {sigma}"),
        ));
    }
    let mut out = theta.clone();
    for (n, coeff) in out.crystal_coeffs.iter_mut().enumerate() {
        let key = StreamKey {
            master_seed: seed,
            realization: n as u64,
            lane: NoiseLane::IdlerVacuum,
        };
        match mode {
            PerturbMode::Multiplicative => {
                let delta = real_gaussian(key, 0, sigma);
                *coeff *= 1.0 + delta;
            }
            PerturbMode::Additive => {
                let delta = C64::new(
                    real_gaussian(key, 0, sigma),
                    real_gaussian(key, 1, sigma),
                );
                *coeff += delta;
            }
        }
    }
    Ok(out)
}

/// Binary poling volume for fabrication preview: voxel sign over (x, y, z)
/// in x-fastest order, covering `unit_cells` QPM periods.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolingVolume {
    pub nx: usize,
    pub ny: usize,
    /// Total z samples = unit_cells * samples_per_period.
    pub nz: usize,
    pub nz_unit_cells: usize,
    pub dx: f64,
    pub dy: f64,
    /// z sample pitch = period / samples_per_period.
    pub dz: f64,
    pub poling_period: f64,
    /// Relative magnitude below which a column is exported unpoled (+1).
    pub duty_threshold: f64,
    /// +1 / -1 in x-fastest order: index = ix + nx*(iy + ny*iz).
    #[serde(skip)]
    pub voxels: Vec<i8>,
}

/// Quantizes the hologram to the two physical poling signs on a z-resolved
/// voxel grid: sign(cos(2 pi z / period + arg(envelope))) where the local
/// magnitude clears `duty_threshold` of the peak; +1 (unpoled) elsewhere.
pub fn export_binary_poling(
    crystal: &CrystalHologram,
    unit_cells: usize,
    samples_per_period: usize,
    duty_threshold: f64,
) -> Result<PolingVolume> {
    if unit_cells == 0 || samples_per_period < 4 {
        return Err(SpdcError::config(
            "poling export",
            format!(
                "need >= 1 unit cell and >= 4 samples per period, got {unit_cells}/{samples_per_period}"
            ),
        ));
    }
    let env = &crystal.transverse_envelope;
    if !env.is_finite() {
        return Err(SpdcError::config(
            "poling export",
            "crystal envelope contains non-finite values",
        ));
    }
    let peak = env.max_abs();
    let cut = duty_threshold * peak;
    let nz = unit_cells * samples_per_period;
    let dz = crystal.qpm_period / samples_per_period as f64;
    let mut voxels = Vec::with_capacity(env.data.len() * nz);
    let two_pi = 2.0 * std::f64::consts::PI;
    for iz in 0..nz {
        // voxel centers, so stripe boundaries quantize symmetrically
        let z = (iz as f64 + 0.5) * dz;
        let carrier = two_pi * z / crystal.qpm_period;
        for v in &env.data {
            let s = if v.norm() > cut {
                if (carrier + v.arg()).cos() >= 0.0 {
                    1i8
                } else {
                    -1i8
                }
            } else {
                1i8 // unpoled convention
            };
            voxels.push(s);
        }
    }
    Ok(PolingVolume {
        nx: env.nx,
        ny: env.ny,
        nz,
        nz_unit_cells: unit_cells,
        dx: env.dx,
        dy: env.dy,
        dz,
        poling_period: crystal.qpm_period,
        duty_threshold,
        voxels,
    })
}

/// Checks the 2D-poling fabrication constraint: crystal structure varies
/// only along y (HG with n = 0) while the pump varies only along x (HG with
/// m = 0).
pub fn check_axis_split(pump_basis: &ModeSet, crystal_basis: &ModeSet) -> Result<()> {
    for spec in &crystal_basis.specs {
        if spec.basis != Basis::HG || spec.index1 != 0 {
            return Err(SpdcError::config(
                "crystal_basis",
                format!(
                    "2D-poling mode requires HG n=0 crystal functions, got {}",
                    spec.label()
                ),
            ));
        }
    }
    for spec in &pump_basis.specs {
        if spec.basis != Basis::HG || spec.index2 != 0 {
            return Err(SpdcError::config(
                "pump_basis",
                format!(
                    "2D-poling mode requires HG m=0 pump functions, got {}",
                    spec.label()
                ),
            ));
        }
    }
    Ok(())
}
