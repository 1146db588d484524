//! Command orchestration: each `cmd_*` function backs one CLI subcommand,
//! producing a run directory whose every file is listed with a checksum in
//! `manifest.json`. Outputs depend only on config and seed, never on worker
//! count or wall clock (the manifest records both for provenance).

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime};

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::config::{config_base_dir, load_config, RunConfig, TargetCfg};
use crate::error::SpdcError;
use crate::grid::Field2D;
use crate::inverse::{
    infer, loss_value, train, DensityRequest, ForwardModel, InferenceReport, PumpOverride,
    TargetKind, TargetSpec, TrainState,
};
use crate::io;
use crate::medium::{export_binary_poling, synth_crystal, synth_pump, ParamVector};
use crate::modes::{ModeSet, ModeSpec, PostSelect};
use crate::pool::worker_count;
use crate::tomography::trace_distance;
use crate::validate::{run_acceptance, ValidationReport};
use crate::Result;

/// Options shared by every subcommand, straight from the CLI flags.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub config_path: PathBuf,
    /// Overrides `noise.master_seed` (and therefore the init seed).
    pub seed: Option<u64>,
    /// Overrides the config's `output_dir`.
    pub out: Option<PathBuf>,
    /// Pump modespec applied at evaluation time; see [`parse_pump_override`].
    pub pump_override: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub file: String,
    pub role: String,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub command: String,
    pub created_unix_s: u64,
    pub wall_seconds: f64,
    pub seed: u64,
    pub workers: usize,
    pub notes: Vec<String>,
    pub config: RunConfig,
    pub artifacts: Vec<ManifestEntry>,
}

/// Collects artifacts for one run directory and finishes with the manifest.
pub struct ArtifactSink {
    dir: PathBuf,
    entries: Vec<ManifestEntry>,
    notes: Vec<String>,
    started: Instant,
}

impl ArtifactSink {
    pub fn new(dir: PathBuf) -> Result<Self> {
        fs::create_dir_all(&dir).map_err(|e| SpdcError::io(dir.display().to_string(), e))?;
        Ok(ArtifactSink {
            dir,
            entries: Vec::new(),
            notes: Vec::new(),
            started: Instant::now(),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn note(&mut self, text: impl Into<String>) {
        self.notes.push(text.into());
    }

    /// Checksums a file already written into the run directory and adds it
    /// to the inventory.
    pub fn record(&mut self, name: &str, role: &str) -> Result<()> {
        let sha256 = io::sha256_hex(&self.path(name))?;
        self.entries.push(ManifestEntry {
            file: name.to_string(),
            role: role.to_string(),
            sha256,
        });
        Ok(())
    }

    /// Writes `manifest.json` (the one file not listed in its own
    /// inventory) and returns the run directory.
    pub fn finish(
        self,
        command: &str,
        seed: u64,
        workers: usize,
        config: &RunConfig,
    ) -> Result<PathBuf> {
        let manifest = RunManifest {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            created_unix_s: SystemTime::now()
                .duration_since(SystemTime::UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
            wall_seconds: self.started.elapsed().as_secs_f64(),
            seed,
            workers,
            notes: self.notes,
            config: config.clone(),
            artifacts: self.entries,
        };
        io::write_json_atomic(&self.dir.join("manifest.json"), &manifest)?;
        Ok(self.dir)
    }
}

/// Pump override grammar: terms joined by `;`, each
/// `family(i1,i2)@waist_m[*re[,im]]`, e.g.
/// `lg(1,0)@4e-5` or `hg(0,0)@2.5e-5*0.996;hg(1,0)@2.5e-5*0.087`.
/// The waist plane stays at z = 0 and coefficients default to 1.
pub fn parse_pump_override(spec: &str) -> Result<PumpOverride> {
    let bad = |reason: String| SpdcError::config("--pump-override", reason);
    let mut specs = Vec::new();
    let mut coeffs = Vec::new();
    let mut waists = Vec::new();
    for term in spec.split(';') {
        let term = term.trim();
        let open = term
            .find('(')
            .ok_or_else(|| bad(format!("`{term}`: missing `(`")))?;
        let close = term
            .find(')')
            .ok_or_else(|| bad(format!("`{term}`: missing `)`")))?;
        let family = &term[..open];
        let mut indices = term[open + 1..close].split(',');
        let parse_i = |tok: Option<&str>| {
            tok.and_then(|t| t.trim().parse::<i32>().ok())
                .ok_or_else(|| bad(format!("`{term}`: bad mode indices")))
        };
        let i1 = parse_i(indices.next())?;
        let i2 = parse_i(indices.next())?;
        if indices.next().is_some() {
            return Err(bad(format!("`{term}`: expected exactly two indices")));
        }
        let rest = &term[close + 1..];
        let rest = rest
            .strip_prefix('@')
            .ok_or_else(|| bad(format!("`{term}`: missing `@waist`")))?;
        let (waist_str, coeff) = match rest.split_once('*') {
            None => (rest, C64::new(1.0, 0.0)),
            Some((w, c)) => {
                let (re_str, im_str) = c.split_once(',').unwrap_or((c, "0"));
                let re: f64 = re_str
                    .trim()
                    .parse()
                    .map_err(|_| bad(format!("`{term}`: bad coefficient `{re_str}`")))?;
                let im: f64 = im_str
                    .trim()
                    .parse()
                    .map_err(|_| bad(format!("`{term}`: bad coefficient `{im_str}`")))?;
                (w, C64::new(re, im))
            }
        };
        let waist: f64 = waist_str
            .trim()
            .parse()
            .map_err(|_| bad(format!("`{term}`: bad waist `{waist_str}`")))?;
        let spec = match family {
            "lg" => ModeSpec::lg(i1, i2, waist, 0.0),
            "hg" => ModeSpec::hg(i1, i2, waist, 0.0),
            other => return Err(bad(format!("unknown family `{other}` (use lg or hg)"))),
        };
        specs.push(spec);
        coeffs.push(coeff);
        waists.push(waist);
    }
    if specs.is_empty() {
        return Err(bad("empty modespec".to_string()));
    }
    Ok(PumpOverride {
        basis: ModeSet::new(specs, PostSelect::None)?,
        coeffs,
        waists,
    })
}

struct Prepared {
    cfg: RunConfig,
    base_dir: PathBuf,
    model: ForwardModel,
    theta: ParamVector,
    /// Full optimizer state when a checkpoint was loaded.
    resumed: Option<TrainState>,
    seed: u64,
    pump_override: Option<PumpOverride>,
}

fn prepare(opts: &RunOptions) -> Result<Prepared> {
    let mut cfg = load_config(&opts.config_path)?;
    if let Some(seed) = opts.seed {
        cfg.noise.master_seed = seed;
    }
    let seed = cfg.noise.master_seed;
    let base_dir = config_base_dir(&opts.config_path);
    let model = cfg.build_model()?;
    let (theta, resumed) = match &cfg.checkpoint {
        Some(rel) => {
            let mut state = io::read_checkpoint(&base_dir.join(rel))?;
            // the config's trainable section decides what a follow-up run
            // may touch, whatever the checkpoint had frozen
            state.theta.trainable_mask = state.theta.mask_from_groups(cfg.trainable_groups());
            (state.theta.clone(), Some(state))
        }
        None => (cfg.build_theta(Some(seed))?, None),
    };
    let pump_override = match &opts.pump_override {
        Some(s) => Some(parse_pump_override(s)?),
        None => None,
    };
    Ok(Prepared {
        cfg,
        base_dir,
        model,
        theta,
        resumed,
        seed,
        pump_override,
    })
}

fn run_dir(opts: &RunOptions, cfg: &RunConfig, command: &str, seed: u64) -> PathBuf {
    if let Some(out) = &opts.out {
        return out.clone();
    }
    if let Some(dir) = &cfg.output_dir {
        return PathBuf::from(dir);
    }
    let scenario = cfg.scenario.as_deref().unwrap_or("run");
    PathBuf::from(format!("runs/{command}_{scenario}_seed{seed}"))
}

fn check_nonzero_drive(theta: &ParamVector, amplitude: f64) -> Result<()> {
    let zero = |coeffs: &[C64]| coeffs.iter().all(|c| c.norm_sqr() == 0.0);
    if amplitude == 0.0 || zero(&theta.pump_coeffs) {
        return Err(SpdcError::config(
            "pump",
            "pump drive is identically zero: the run would produce no coincidences",
        ));
    }
    if zero(&theta.crystal_coeffs) {
        return Err(SpdcError::config(
            "crystal.coefficients",
            "crystal hologram is identically zero: the run would produce no coincidences",
        ));
    }
    Ok(())
}

fn intensity(field: &Field2D) -> Vec<f64> {
    field.data.iter().map(|z| z.norm_sqr()).collect()
}

/// Writes the observable artifacts shared by forward, train, and
/// tomography runs: coincidence matrix (CSV + JSON + heatmap), pump and
/// crystal heatmaps, and density artifacts when reconstructed.
fn write_observables(
    sink: &mut ArtifactSink,
    report: &InferenceReport,
    theta: &ParamVector,
    model: &ForwardModel,
    prefix: &str,
) -> Result<()> {
    let g2_csv = format!("{prefix}g2.csv");
    io::write_coincidence_csv(&sink.path(&g2_csv), &report.g2)?;
    sink.record(&g2_csv, "coincidence-matrix")?;

    let g2_json = format!("{prefix}g2.json");
    io::write_json_atomic(&sink.path(&g2_json), &report.g2)?;
    sink.record(&g2_json, "coincidence-matrix-json")?;

    let g2_pgm = format!("{prefix}g2.pgm");
    io::write_pgm(
        &sink.path(&g2_pgm),
        report.g2.n_cols(),
        report.g2.n_rows(),
        &report.g2.values,
        false,
    )?;
    sink.record(&g2_pgm, "heatmap")?;

    let pump = synth_pump(
        theta,
        &model.grid,
        &model.waves,
        model.amplitude,
        model.grid.crystal_length() / 2.0,
    )?;
    io::write_pgm(
        &sink.path("pump_intensity.pgm"),
        model.grid.nx,
        model.grid.ny,
        &intensity(&pump.envelope),
        true,
    )?;
    sink.record("pump_intensity.pgm", "heatmap")?;

    let crystal = synth_crystal(theta, &model.grid, &model.waves)?;
    let env = &crystal.transverse_envelope;
    io::write_pgm(
        &sink.path("crystal_magnitude.pgm"),
        model.grid.nx,
        model.grid.ny,
        &env.data.iter().map(|z| z.norm()).collect::<Vec<_>>(),
        true,
    )?;
    sink.record("crystal_magnitude.pgm", "heatmap")?;
    io::write_pgm(
        &sink.path("crystal_phase.pgm"),
        model.grid.nx,
        model.grid.ny,
        &env
            .data
            .iter()
            .map(|z| z.arg() + std::f64::consts::PI)
            .collect::<Vec<_>>(),
        true,
    )?;
    sink.record("crystal_phase.pgm", "heatmap")?;

    if let Some(rho) = &report.rho {
        let name = format!("{prefix}rho.json");
        io::write_rho_json(&sink.path(&name), rho)?;
        sink.record(&name, "density-matrix")?;
        let re_name = format!("{prefix}rho_real.csv");
        let im_name = format!("{prefix}rho_imag.csv");
        io::write_complex_matrix_csv(
            &sink.path(&re_name),
            &sink.path(&im_name),
            &rho.basis_labels,
            &rho.matrix,
        )?;
        sink.record(&re_name, "density-matrix-real")?;
        sink.record(&im_name, "density-matrix-imag")?;
        let abs_name = format!("{prefix}rho_abs.pgm");
        let n = rho.n();
        io::write_pgm(
            &sink.path(&abs_name),
            n,
            n,
            &rho.matrix.iter().map(|z| z.norm()).collect::<Vec<_>>(),
            false,
        )?;
        sink.record(&abs_name, "heatmap")?;
    }
    Ok(())
}

fn snapshot_config(sink: &mut ArtifactSink, cfg: &RunConfig) -> Result<()> {
    io::write_json_atomic(&sink.path("config_snapshot.json"), cfg)?;
    sink.record("config_snapshot.json", "config")
}

fn density_request_for(cfg: &RunConfig, target: Option<&TargetSpec>) -> Option<DensityRequest> {
    if let Some(req) = cfg.build_density_request() {
        return Some(req);
    }
    match target.map(|t| &t.kind) {
        Some(TargetKind::DensityMatrix {
            dim, comp_modes, ..
        }) => Some(DensityRequest {
            dim: *dim,
            comp_modes: comp_modes.clone(),
        }),
        _ => None,
    }
}

/// Forward run: propagate the configured source and export observables.
pub fn cmd_forward(opts: &RunOptions) -> Result<PathBuf> {
    let p = prepare(opts)?;
    check_nonzero_drive(&p.theta, p.model.amplitude)?;
    let workers = worker_count();
    let density = density_request_for(&p.cfg, p.cfg.build_target(&p.base_dir)?.as_ref());
    let report = infer(
        &p.theta,
        &p.model,
        p.pump_override.as_ref(),
        density.as_ref(),
        workers,
    )?;
    let mut sink = ArtifactSink::new(run_dir(opts, &p.cfg, "forward", p.seed))?;
    if let Some(ov) = &opts.pump_override {
        sink.note(format!("pump override: {ov}"));
    }
    write_observables(&mut sink, &report, &p.theta, &p.model, "")?;
    snapshot_config(&mut sink, &p.cfg)?;
    sink.finish("forward", p.seed, workers, &p.cfg)
}

/// Training run: optimize toward the configured target, checkpointing
/// every epoch. A divergence abort still writes the partial loss curve,
/// the last checkpoint, and a manifest note before the error surfaces.
pub fn cmd_train(opts: &RunOptions) -> Result<PathBuf> {
    let p = prepare(opts)?;
    let target = p.cfg.build_target(&p.base_dir)?.ok_or_else(|| {
        SpdcError::config("target", "training requires a target section")
    })?;
    let groups = p.cfg.trainable_groups();
    if !(groups.pump_coeffs || groups.pump_waists || groups.crystal_coeffs || groups.crystal_waists)
    {
        return Err(SpdcError::config(
            "trainable",
            "no parameter group enabled; nothing to train",
        ));
    }
    check_nonzero_drive(&p.theta, p.model.amplitude)?;
    let workers = worker_count();
    let optim = p.cfg.build_optim()?;

    let mut sink = ArtifactSink::new(run_dir(opts, &p.cfg, "train", p.seed))?;
    let mut state = match p.resumed {
        Some(mut resumed) => {
            sink.note(format!(
                "resumed from checkpoint at iteration {}",
                resumed.iteration
            ));
            resumed.optim = optim;
            resumed
        }
        None => TrainState::new(p.theta, optim, p.seed)?,
    };
    if let Some(ov) = &p.pump_override {
        // swapping the pump basis invalidates the optimizer moments, so
        // the override starts a fresh state around the new drive
        state = TrainState::new(
            crate::inverse::apply_pump_override(&state.theta, ov)?,
            state.optim.clone(),
            state.master_seed,
        )?;
        sink.note(format!(
            "pump override: {}",
            opts.pump_override.as_deref().unwrap_or("")
        ));
    }

    let ckpt_last = sink.path("checkpoint_last.json");
    let mut best: Option<(f64, ParamVector, usize)> = None;
    let mut prev_theta = state.theta.clone();
    let train_result = if state.optim.epochs == 0 {
        let loss = loss_value(&state.theta, &target, &p.model, workers)?;
        state.loss_history.push(loss);
        io::write_checkpoint(&ckpt_last, &state)?;
        Ok(())
    } else {
        train(&mut state, &target, &p.model, workers, |s| {
            // history.last() is the loss of the parameters from before
            // this epoch's update, i.e. of `prev_theta`
            let evaluated = prev_theta.clone();
            prev_theta = s.theta.clone();
            let last = *s.loss_history.last().unwrap_or(&f64::INFINITY);
            if best.as_ref().map_or(true, |(b, _, _)| last < *b) {
                best = Some((last, evaluated, s.iteration.saturating_sub(1)));
            }
            io::write_checkpoint(&ckpt_last, s)
        })
    };
    let diverged = matches!(&train_result, Err(SpdcError::Diverged { .. }));
    if diverged {
        if let Err(SpdcError::Diverged { epoch, loss, .. }) = &train_result {
            sink.note(format!("divergence abort at epoch {epoch}, loss {loss:.6e}"));
        }
        io::write_checkpoint(&ckpt_last, &state)?;
    }
    sink.record("checkpoint_last.json", "checkpoint")?;

    io::write_loss_csv(&sink.path("loss.csv"), &state.loss_history)?;
    sink.record("loss.csv", "loss-curve")?;

    if let Some((best_loss, best_theta, best_epoch)) = best {
        let mut best_state = TrainState::new(
            best_theta,
            state.optim.clone(),
            state.master_seed,
        )?;
        best_state.iteration = best_epoch;
        best_state.loss_history = state.loss_history[..=best_epoch.min(state.loss_history.len() - 1)].to_vec();
        io::write_checkpoint(&sink.path("checkpoint_best.json"), &best_state)?;
        sink.record("checkpoint_best.json", "checkpoint")?;
        sink.note(format!("best loss {best_loss:.6e} at epoch {best_epoch}"));
    }

    // final observables from whatever parameters the run ended on
    if !diverged {
        let density = density_request_for(&p.cfg, Some(&target));
        let report = infer(&state.theta, &p.model, None, density.as_ref(), workers)?;
        write_observables(&mut sink, &report, &state.theta, &p.model, "final_")?;
    }
    snapshot_config(&mut sink, &p.cfg)?;
    let dir = sink.finish("train", p.seed, workers, &p.cfg)?;
    train_result.map(|()| dir)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TomographyReport {
    pub dim: usize,
    pub clipped_mass: f64,
    /// Present when the config carries a density target.
    pub trace_distance_to_target: Option<f64>,
}

/// Tomography run: simulate the projective measurement plan on the
/// configured source and reconstruct the density matrix.
pub fn cmd_tomography(opts: &RunOptions) -> Result<PathBuf> {
    let p = prepare(opts)?;
    check_nonzero_drive(&p.theta, p.model.amplitude)?;
    let target = p.cfg.build_target(&p.base_dir)?;
    let density = density_request_for(&p.cfg, target.as_ref()).ok_or_else(|| {
        SpdcError::config(
            "density_request",
            "tomography requires a density_request section or a density target",
        )
    })?;
    if !(density.dim == 2 || density.dim == 3) {
        return Err(SpdcError::Feature {
            reason: format!("tomography supports qudit dimension 2 or 3, got {}", density.dim),
        });
    }
    let workers = worker_count();
    let report = infer(
        &p.theta,
        &p.model,
        p.pump_override.as_ref(),
        Some(&density),
        workers,
    )?;
    let rho = report
        .rho
        .as_ref()
        .expect("density request produces a reconstruction");

    let mut sink = ArtifactSink::new(run_dir(opts, &p.cfg, "tomography", p.seed))?;
    if let Some(ov) = &opts.pump_override {
        sink.note(format!("pump override: {ov}"));
    }
    write_observables(&mut sink, &report, &p.theta, &p.model, "")?;

    let distance = match target.as_ref().map(|t| &t.kind) {
        Some(TargetKind::DensityMatrix { rho: t_rho, dim, .. }) if *dim == density.dim => Some(
            trace_distance(&rho.matrix, t_rho, density.dim * density.dim)?,
        ),
        _ => None,
    };
    let tomo = TomographyReport {
        dim: density.dim,
        clipped_mass: rho.clipped_mass,
        trace_distance_to_target: distance,
    };
    io::write_json_atomic(&sink.path("tomography_report.json"), &tomo)?;
    sink.record("tomography_report.json", "report")?;
    if let Some(d) = distance {
        sink.note(format!("trace distance to target: {d:.6}"));
    }
    snapshot_config(&mut sink, &p.cfg)?;
    sink.finish("tomography", p.seed, workers, &p.cfg)
}

/// Fabrication-preview constants: the exported volume spans three QPM
/// periods, each sampled 32 planes deep; columns below 5% of the peak
/// envelope magnitude stay unpoled.
pub const EXPORT_UNIT_CELLS: usize = 3;
pub const EXPORT_SAMPLES_PER_PERIOD: usize = 32;
pub const EXPORT_DUTY_THRESHOLD: f64 = 0.05;

/// Crystal export: binary poling voxels plus orientation slices.
pub fn cmd_export_crystal(opts: &RunOptions) -> Result<PathBuf> {
    let p = prepare(opts)?;
    let crystal = synth_crystal(&p.theta, &p.model.grid, &p.model.waves)?;
    let volume = export_binary_poling(
        &crystal,
        EXPORT_UNIT_CELLS,
        EXPORT_SAMPLES_PER_PERIOD,
        EXPORT_DUTY_THRESHOLD,
    )?;

    let mut sink = ArtifactSink::new(run_dir(opts, &p.cfg, "export-crystal", p.seed))?;
    io::write_poling_voxels(
        &sink.path("crystal_voxels.i8"),
        &sink.path("crystal_voxels.json"),
        &volume,
    )?;
    sink.record("crystal_voxels.i8", "poling-volume")?;
    sink.record("crystal_voxels.json", "poling-volume-header")?;

    // transverse slice at the entrance face
    let (nx, ny, nz) = (volume.nx, volume.ny, volume.nz);
    let slice_z0: Vec<f64> = (0..nx * ny)
        .map(|i| (volume.voxels[i] as f64 + 1.0) / 2.0)
        .collect();
    io::write_pgm(&sink.path("crystal_slice_z0.pgm"), nx, ny, &slice_z0, true)?;
    sink.record("crystal_slice_z0.pgm", "heatmap")?;

    // longitudinal slice at mid-height, rows running down the crystal
    let iy = ny / 2;
    let mut slice_xz = Vec::with_capacity(nx * nz);
    for iz in 0..nz {
        for ix in 0..nx {
            let v = volume.voxels[ix + nx * (iy + ny * iz)];
            slice_xz.push((v as f64 + 1.0) / 2.0);
        }
    }
    io::write_pgm(&sink.path("crystal_slice_xz.pgm"), nx, nz, &slice_xz, true)?;
    sink.record("crystal_slice_xz.pgm", "heatmap")?;

    let env = &crystal.transverse_envelope;
    io::write_pgm(
        &sink.path("crystal_magnitude.pgm"),
        p.model.grid.nx,
        p.model.grid.ny,
        &env.data.iter().map(|z| z.norm()).collect::<Vec<_>>(),
        true,
    )?;
    sink.record("crystal_magnitude.pgm", "heatmap")?;

    snapshot_config(&mut sink, &p.cfg)?;
    sink.finish("export-crystal", p.seed, worker_count(), &p.cfg)
}

/// Acceptance-suite run. Always writes `report.json`; the caller decides
/// the exit status from `report.all_passed()`.
pub fn cmd_validate(out: Option<PathBuf>) -> Result<(PathBuf, ValidationReport)> {
    let workers = worker_count();
    let report = run_acceptance(workers);
    let dir = out.unwrap_or_else(|| PathBuf::from("runs/validate"));
    fs::create_dir_all(&dir).map_err(|e| SpdcError::io(dir.display().to_string(), e))?;
    io::write_json_atomic(&dir.join("report.json"), &report)?;
    Ok((dir, report))
}
