//! Run configuration: a single versioned JSON document. The schema types
//! here own the JSON shape (SI units, snake_case, unknown keys rejected)
//! and convert into the library's domain types via the `build_*` methods,
//! so internal serde representations stay free to evolve.

use std::path::{Path, PathBuf};

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::SpdcError;
use crate::grid::{build_grid, wave_params, Poling, SimGrid, WaveParams};
use crate::inverse::{
    init_theta, DensityRequest, ForwardModel, OptimSettings, TargetSpec,
};
use crate::io::{c64_unpairs, read_coincidence_csv, read_json};
use crate::medium::{check_axis_split, ParamVector, TrainGroups};
use crate::modes::{ModeSet, ModeSpec, PostSelect};
use crate::observables::CoincidenceMatrix;
use crate::propagator::NoiseSpec;
use crate::tomography::pure_state_density;
use crate::Result;

pub const CONFIG_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridCfg {
    pub nx: usize,
    pub ny: usize,
    pub dx_m: f64,
    pub dy_m: f64,
    pub dz_m: f64,
    pub crystal_length_m: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolingCfg {
    AutoQpm,
    PeriodM(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WavesCfg {
    pub lambda_p_m: f64,
    pub lambda_s_m: f64,
    pub lambda_i_m: f64,
    pub n_p: f64,
    pub n_s: f64,
    pub n_i: f64,
    pub d24_m_per_v: f64,
    pub poling: PolingCfg,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LgEntry {
    pub l: i32,
    pub p: i32,
    pub waist_m: f64,
    #[serde(default)]
    pub waist_plane_z_m: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HgEntry {
    pub n: i32,
    pub m: i32,
    pub waist_m: f64,
    #[serde(default)]
    pub waist_plane_z_m: f64,
}

/// One basis or detection mode. Externally tagged so the JSON reads
/// `{"lg": {"l": 1, "p": 0, "waist_m": 4e-5}}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeEntry {
    Lg(LgEntry),
    Hg(HgEntry),
}

impl ModeEntry {
    fn to_spec(&self) -> ModeSpec {
        match self {
            ModeEntry::Lg(e) => ModeSpec::lg(e.l, e.p, e.waist_m, e.waist_plane_z_m),
            ModeEntry::Hg(e) => ModeSpec::hg(e.n, e.m, e.waist_m, e.waist_plane_z_m),
        }
    }

    pub fn from_spec(spec: &ModeSpec) -> Self {
        match spec.basis {
            crate::modes::Basis::LG => ModeEntry::Lg(LgEntry {
                l: spec.index1,
                p: spec.index2,
                waist_m: spec.waist,
                waist_plane_z_m: spec.waist_plane_z,
            }),
            crate::modes::Basis::HG => ModeEntry::Hg(HgEntry {
                n: spec.index1,
                m: spec.index2,
                waist_m: spec.waist,
                waist_plane_z_m: spec.waist_plane_z,
            }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PostSelectCfg {
    LgP0,
    HgM0,
    None,
}

impl From<PostSelectCfg> for PostSelect {
    fn from(c: PostSelectCfg) -> PostSelect {
        match c {
            PostSelectCfg::LgP0 => PostSelect::LgP0,
            PostSelectCfg::HgM0 => PostSelect::HgM0,
            PostSelectCfg::None => PostSelect::None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PumpCfg {
    /// Relative drive strength multiplied into the pump envelope; the
    /// low-gain knob.
    pub amplitude: f64,
    pub modes: Vec<ModeEntry>,
    /// `[re, im]` per mode. Omit to draw the seeded random initialization
    /// (unit fundamental, 0.1-sigma Gaussian elsewhere).
    #[serde(default)]
    pub coefficients: Option<Vec<[f64; 2]>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CrystalCfg {
    pub modes: Vec<ModeEntry>,
    #[serde(default)]
    pub coefficients: Option<Vec<[f64; 2]>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectionCfg {
    pub modes: Vec<ModeEntry>,
    pub post_select: PostSelectCfg,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseCfg {
    pub n_realizations: usize,
    pub master_seed: u64,
    #[serde(default = "default_noise_std")]
    pub noise_std: f64,
}

fn default_noise_std() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimCfg {
    pub epochs: usize,
    pub lr_coeff: f64,
    pub lr_waist: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub cosine_decay: bool,
    pub divergence_factor: f64,
}

impl Default for OptimCfg {
    fn default() -> Self {
        let s = OptimSettings::default();
        OptimCfg {
            epochs: s.epochs,
            lr_coeff: s.lr_coeff,
            lr_waist: s.lr_waist,
            beta1: s.beta1,
            beta2: s.beta2,
            eps: s.eps,
            cosine_decay: s.cosine_decay,
            divergence_factor: s.divergence_factor,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainableCfg {
    pub pump_coeffs: bool,
    pub pump_waists: bool,
    pub crystal_coeffs: bool,
    pub crystal_waists: bool,
}

impl From<TrainableCfg> for TrainGroups {
    fn from(c: TrainableCfg) -> TrainGroups {
        TrainGroups {
            pump_coeffs: c.pump_coeffs,
            pump_waists: c.pump_waists,
            crystal_coeffs: c.crystal_coeffs,
            crystal_waists: c.crystal_waists,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InlineMatrix {
    pub row_labels: Vec<String>,
    pub col_labels: Vec<String>,
    /// Row-major, rows = idler modes.
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatrixSource {
    /// CSV in the coincidence layout, resolved relative to the config file.
    Path(String),
    Inline(InlineMatrix),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RhoSource {
    /// rho JSON written by this tool, resolved relative to the config file.
    Path(String),
    /// Row-major d^2 x d^2 complex matrix as `[re, im]` pairs.
    Inline(Vec<[f64; 2]>),
    /// d^2 pure-state amplitudes over the two-qudit computational basis;
    /// normalized here, the target becomes the projector onto it.
    PureState(Vec<[f64; 2]>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoincidenceTargetCfg {
    #[serde(default = "default_unit_weight")]
    pub w_kl: f64,
    #[serde(default)]
    pub w_l1: f64,
    pub matrix: MatrixSource,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DensityTargetCfg {
    #[serde(default = "default_unit_weight")]
    pub w_trace: f64,
    pub dim: usize,
    /// Indices into the detection mode list forming the computational basis.
    pub comp_modes: Vec<usize>,
    pub rho: RhoSource,
}

fn default_unit_weight() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetCfg {
    Coincidence(CoincidenceTargetCfg),
    Density(DensityTargetCfg),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DensityRequestCfg {
    pub dim: usize,
    pub comp_modes_start: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    #[serde(default)]
    pub scenario: Option<String>,
    #[serde(default)]
    pub output_dir: Option<String>,
    pub grid: GridCfg,
    pub waves: WavesCfg,
    pub pump: PumpCfg,
    pub crystal: CrystalCfg,
    pub detection: DetectionCfg,
    pub noise: NoiseCfg,
    /// Optional checkpoint to load parameters from, resolved relative to
    /// the config file. When set it replaces the pump/crystal sections'
    /// coefficients and waists entirely (train runs resume from it).
    #[serde(default)]
    pub checkpoint: Option<String>,
    /// Restricts pump and crystal bases to orthogonal single axes, the
    /// electric-field-poling constraint of 2D nonlinear photonic crystals.
    #[serde(default)]
    pub axis_split_2d: bool,
    #[serde(default)]
    pub optimizer: OptimCfg,
    #[serde(default)]
    pub trainable: Option<TrainableCfg>,
    #[serde(default)]
    pub target: Option<TargetCfg>,
    /// When set, forward/tomography runs also reconstruct a density matrix
    /// over `dim` consecutive detection modes starting at
    /// `comp_modes_start`.
    #[serde(default)]
    pub density_request: Option<DensityRequestCfg>,
}

fn mode_set(entries: &[ModeEntry], rule: PostSelect, field: &str) -> Result<ModeSet> {
    if entries.is_empty() {
        return Err(SpdcError::config(field, "at least one mode required"));
    }
    ModeSet::new(entries.iter().map(ModeEntry::to_spec).collect(), rule)
        .map_err(|e| SpdcError::config(field, e.to_string()))
}

impl RunConfig {
    /// Structural validation with field-path errors. Cross-references into
    /// physics (grid power-of-two, waist resolution, energy conservation)
    /// surface later from the builders with the same error type.
    pub fn validate(&self) -> Result<()> {
        if self.schema_version != CONFIG_SCHEMA_VERSION {
            return Err(SpdcError::config(
                "schema_version",
                format!(
                    "unsupported version {} (this build reads {CONFIG_SCHEMA_VERSION})",
                    self.schema_version
                ),
            ));
        }
        for (field, modes, coeffs) in [
            ("pump", &self.pump.modes, &self.pump.coefficients),
            ("crystal", &self.crystal.modes, &self.crystal.coefficients),
        ] {
            if modes.is_empty() {
                return Err(SpdcError::config(
                    format!("{field}.modes"),
                    "at least one mode required",
                ));
            }
            if let Some(c) = coeffs {
                if c.len() != modes.len() {
                    return Err(SpdcError::config(
                        format!("{field}.coefficients"),
                        format!("{} coefficients for {} modes", c.len(), modes.len()),
                    ));
                }
            }
        }
        if !(self.pump.amplitude.is_finite() && self.pump.amplitude >= 0.0) {
            return Err(SpdcError::config(
                "pump.amplitude",
                "must be finite and non-negative",
            ));
        }
        if self.detection.modes.is_empty() {
            return Err(SpdcError::config(
                "detection.modes",
                "at least one mode required",
            ));
        }
        if let Some(TargetCfg::Density(d)) = &self.target {
            for &idx in &d.comp_modes {
                if idx >= self.detection.modes.len() {
                    return Err(SpdcError::config(
                        "target.density.comp_modes",
                        format!(
                            "index {idx} outside the {}-mode detection set",
                            self.detection.modes.len()
                        ),
                    ));
                }
            }
        }
        if let Some(req) = &self.density_request {
            if req.comp_modes_start + req.dim > self.detection.modes.len() {
                return Err(SpdcError::config(
                    "density_request",
                    format!(
                        "modes {}..{} outside the {}-mode detection set",
                        req.comp_modes_start,
                        req.comp_modes_start + req.dim,
                        self.detection.modes.len()
                    ),
                ));
            }
        }
        Ok(())
    }

    pub fn build_grid(&self) -> Result<SimGrid> {
        build_grid(
            self.grid.nx,
            self.grid.ny,
            self.grid.dx_m,
            self.grid.dy_m,
            self.grid.dz_m,
            self.grid.crystal_length_m,
        )
    }

    pub fn build_waves(&self) -> Result<WaveParams> {
        let poling = match self.waves.poling {
            PolingCfg::AutoQpm => Poling::AutoQpm,
            PolingCfg::PeriodM(p) => Poling::Period(p),
        };
        wave_params(
            self.waves.lambda_p_m,
            self.waves.lambda_s_m,
            self.waves.lambda_i_m,
            self.waves.n_p,
            self.waves.n_s,
            self.waves.n_i,
            self.waves.d24_m_per_v,
            poling,
        )
    }

    pub fn build_noise(&self) -> NoiseSpec {
        NoiseSpec {
            n_realizations: self.noise.n_realizations,
            master_seed: self.noise.master_seed,
            noise_std: self.noise.noise_std,
        }
    }

    pub fn build_detection(&self) -> Result<ModeSet> {
        mode_set(
            &self.detection.modes,
            self.detection.post_select.into(),
            "detection.modes",
        )
    }

    pub fn build_model(&self) -> Result<ForwardModel> {
        let model = ForwardModel {
            grid: self.build_grid()?,
            waves: self.build_waves()?,
            noise: self.build_noise(),
            amplitude: self.pump.amplitude,
            detection: self.build_detection()?,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn trainable_groups(&self) -> TrainGroups {
        self.trainable.map(TrainGroups::from).unwrap_or(TrainGroups {
            pump_coeffs: false,
            pump_waists: false,
            crystal_coeffs: false,
            crystal_waists: false,
        })
    }

    /// Builds the parameter vector. Explicit coefficient lists win; missing
    /// lists fall back to the seeded random initialization, where `seed`
    /// defaults to the noise master seed.
    pub fn build_theta(&self, seed_override: Option<u64>) -> Result<ParamVector> {
        let groups = self.trainable_groups();
        let pump_basis = mode_set(&self.pump.modes, PostSelect::None, "pump.modes")?;
        let crystal_basis = mode_set(&self.crystal.modes, PostSelect::None, "crystal.modes")?;
        if self.axis_split_2d {
            check_axis_split(&pump_basis, &crystal_basis)?;
        }
        let seed = seed_override.unwrap_or(self.noise.master_seed);
        let mut theta = init_theta(pump_basis, crystal_basis, groups, seed)?;
        if let Some(c) = &self.pump.coefficients {
            theta.pump_coeffs = c64_unpairs(c);
        }
        if let Some(c) = &self.crystal.coefficients {
            theta.crystal_coeffs = c64_unpairs(c);
        }
        theta.validate()?;
        Ok(theta)
    }

    pub fn build_optim(&self) -> Result<OptimSettings> {
        let o = OptimSettings {
            epochs: self.optimizer.epochs,
            lr_coeff: self.optimizer.lr_coeff,
            lr_waist: self.optimizer.lr_waist,
            beta1: self.optimizer.beta1,
            beta2: self.optimizer.beta2,
            eps: self.optimizer.eps,
            cosine_decay: self.optimizer.cosine_decay,
            divergence_factor: self.optimizer.divergence_factor,
        };
        o.validate()?;
        Ok(o)
    }

    /// Resolves the target, loading any referenced files relative to
    /// `base_dir` (the config file's directory).
    pub fn build_target(&self, base_dir: &Path) -> Result<Option<TargetSpec>> {
        let Some(target) = &self.target else {
            return Ok(None);
        };
        let spec = match target {
            TargetCfg::Coincidence(c) => {
                let matrix = match &c.matrix {
                    MatrixSource::Path(rel) => read_coincidence_csv(&base_dir.join(rel))?,
                    MatrixSource::Inline(m) => CoincidenceMatrix {
                        row_labels: m.row_labels.clone(),
                        col_labels: m.col_labels.clone(),
                        values: m.values.clone(),
                        clamped_mass: 0.0,
                    },
                };
                TargetSpec::coincidence(matrix, c.w_kl, c.w_l1)
            }
            TargetCfg::Density(d) => {
                let rho: Vec<C64> = match &d.rho {
                    RhoSource::Path(rel) => crate::io::read_rho_json(&base_dir.join(rel))?.matrix,
                    RhoSource::Inline(pairs) => c64_unpairs(pairs),
                    RhoSource::PureState(pairs) => {
                        let mut psi = c64_unpairs(pairs);
                        let norm: f64 = psi.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
                        if norm <= 0.0 {
                            return Err(SpdcError::config(
                                "target.density.rho.pure_state",
                                "zero-norm state",
                            ));
                        }
                        for z in &mut psi {
                            *z /= norm;
                        }
                        pure_state_density(&psi)?
                    }
                };
                TargetSpec::density(rho, d.dim, d.comp_modes.clone(), d.w_trace)
            }
        };
        spec.validate()?;
        Ok(Some(spec))
    }

    pub fn build_density_request(&self) -> Option<DensityRequest> {
        self.density_request.map(|req| DensityRequest {
            dim: req.dim,
            comp_modes: (req.comp_modes_start..req.comp_modes_start + req.dim).collect(),
        })
    }
}

/// Loads, version-checks and structurally validates a config file.
pub fn load_config(path: &Path) -> Result<RunConfig> {
    let cfg: RunConfig = read_json(path)?;
    cfg.validate()?;
    Ok(cfg)
}

/// The config file's directory, for resolving relative artifact paths.
pub fn config_base_dir(path: &Path) -> PathBuf {
    path.parent()
        .filter(|p| !p.as_os_str().is_empty())
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."))
}
