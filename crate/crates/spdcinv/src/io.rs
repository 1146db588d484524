//! File formats for run artifacts: CSV matrices, JSON mirrors, PGM
//! heatmaps, binary poling voxels, checkpoints, and checksums. Layouts are
//! documented byte-for-byte in docs/formats.md; keep the two in sync.

use std::fs;
use std::io::Read;
use std::path::Path;

use num_complex::Complex64 as C64;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::SpdcError;
use crate::inverse::{OptimSettings, TrainState};
use crate::medium::{ParamVector, PolingVolume, TrainGroups};
use crate::modes::ModeSet;
use crate::observables::CoincidenceMatrix;
use crate::tomography::DensityMatrix;
use crate::Result;

fn path_str(path: &Path) -> String {
    path.display().to_string()
}

/// Writes via a `.tmp` sibling and renames into place, so readers never see
/// a half-written file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension(match path.extension() {
        Some(ext) => format!("{}.tmp", ext.to_string_lossy()),
        None => "tmp".to_string(),
    });
    fs::write(&tmp, bytes).map_err(|e| SpdcError::io(path_str(&tmp), e))?;
    fs::rename(&tmp, path).map_err(|e| SpdcError::io(path_str(path), e))?;
    Ok(())
}

pub fn write_json_atomic<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| SpdcError::Parse {
            path: path_str(path),
            reason: e.to_string(),
        })?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| SpdcError::io(path_str(path), e))?;
    serde_json::from_str(&text).map_err(|e| SpdcError::Parse {
        path: path_str(path),
        reason: format!("line {} column {}: {}", e.line(), e.column(), e),
    })
}

/// SHA-256 of a file as lowercase hex.
pub fn sha256_hex(path: &Path) -> Result<String> {
    let mut file = fs::File::open(path).map_err(|e| SpdcError::io(path_str(path), e))?;
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 65536];
    loop {
        let n = file.read(&mut buf).map_err(|e| SpdcError::io(path_str(path), e))?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    let digest = hasher.finalize();
    let mut hex = String::with_capacity(64);
    for b in digest {
        hex.push_str(&format!("{b:02x}"));
    }
    Ok(hex)
}

fn check_label(label: &str, path: &Path) -> Result<()> {
    if label.contains(',') || label.contains('\n') {
        return Err(SpdcError::Parse {
            path: path_str(path),
            reason: format!("label `{label}` contains a CSV delimiter"),
        });
    }
    Ok(())
}

/// Coincidence matrix as CSV: header `mode,<signal labels>`, then one row
/// per idler mode. Values use Rust's shortest round-trip float formatting,
/// so read-back is bit-exact.
pub fn write_coincidence_csv(path: &Path, m: &CoincidenceMatrix) -> Result<()> {
    let mut out = String::from("mode");
    for label in &m.col_labels {
        check_label(label, path)?;
        out.push(',');
        out.push_str(label);
    }
    out.push('\n');
    for (r, label) in m.row_labels.iter().enumerate() {
        check_label(label, path)?;
        out.push_str(label);
        for c in 0..m.n_cols() {
            out.push(',');
            out.push_str(&format!("{}", m.get(r, c)));
        }
        out.push('\n');
    }
    write_atomic(path, out.as_bytes())
}

pub fn read_coincidence_csv(path: &Path) -> Result<CoincidenceMatrix> {
    let text = fs::read_to_string(path).map_err(|e| SpdcError::io(path_str(path), e))?;
    let parse_err = |reason: String| SpdcError::Parse {
        path: path_str(path),
        reason,
    };
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| parse_err("empty file".into()))?;
    let mut cols = header.split(',');
    let first = cols.next().unwrap_or("");
    if first != "mode" {
        return Err(parse_err(format!("header must start with `mode`, got `{first}`")));
    }
    let col_labels: Vec<String> = cols.map(str::to_string).collect();
    if col_labels.is_empty() {
        return Err(parse_err("no signal columns".into()));
    }
    let mut row_labels = Vec::new();
    let mut values = Vec::new();
    for (lineno, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let mut cells = line.split(',');
        row_labels.push(cells.next().unwrap_or("").to_string());
        let mut n = 0;
        for cell in cells {
            let v: f64 = cell.parse().map_err(|_| {
                parse_err(format!("line {}: bad float `{cell}`", lineno + 2))
            })?;
            values.push(v);
            n += 1;
        }
        if n != col_labels.len() {
            return Err(parse_err(format!(
                "line {}: expected {} values, got {n}",
                lineno + 2,
                col_labels.len()
            )));
        }
    }
    if row_labels.is_empty() {
        return Err(parse_err("no data rows".into()));
    }
    Ok(CoincidenceMatrix {
        row_labels,
        col_labels,
        values,
        clamped_mass: 0.0,
    })
}

/// Loss history CSV: header `epoch,loss`, one row per epoch.
pub fn write_loss_csv(path: &Path, losses: &[f64]) -> Result<()> {
    let mut out = String::from("epoch,loss\n");
    for (epoch, loss) in losses.iter().enumerate() {
        out.push_str(&format!("{epoch},{loss}\n"));
    }
    write_atomic(path, out.as_bytes())
}

pub fn read_loss_csv(path: &Path) -> Result<Vec<f64>> {
    let text = fs::read_to_string(path).map_err(|e| SpdcError::io(path_str(path), e))?;
    let mut losses = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if lineno == 0 || line.is_empty() {
            continue;
        }
        let cell = line.split(',').nth(1).ok_or_else(|| SpdcError::Parse {
            path: path_str(path),
            reason: format!("line {}: missing loss column", lineno + 1),
        })?;
        losses.push(cell.parse().map_err(|_| SpdcError::Parse {
            path: path_str(path),
            reason: format!("line {}: bad float `{cell}`", lineno + 1),
        })?);
    }
    Ok(losses)
}

/// One square complex matrix written as a labeled CSV of `re+imj` cells
/// would be ambiguous to spreadsheet tools; instead the real and imaginary
/// parts go to two sibling CSV files sharing the coincidence layout.
pub fn write_complex_matrix_csv(
    real_path: &Path,
    imag_path: &Path,
    labels: &[String],
    matrix: &[C64],
) -> Result<()> {
    let n = labels.len();
    if matrix.len() != n * n {
        return Err(SpdcError::shape(
            "write_complex_matrix_csv",
            format!("{n}x{n}"),
            format!("{} entries", matrix.len()),
        ));
    }
    let part = |take_re: bool| CoincidenceMatrix {
        row_labels: labels.to_vec(),
        col_labels: labels.to_vec(),
        values: matrix
            .iter()
            .map(|z| if take_re { z.re } else { z.im })
            .collect(),
        clamped_mass: 0.0,
    };
    write_coincidence_csv(real_path, &part(true))?;
    write_coincidence_csv(imag_path, &part(false))
}

/// JSON image of a density matrix; complex entries are `[re, im]` pairs.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RhoJson {
    pub dim: usize,
    pub basis_labels: Vec<String>,
    pub matrix: Vec<[f64; 2]>,
    pub raw: Vec<[f64; 2]>,
    pub clipped_mass: f64,
}

pub fn c64_pairs(values: &[C64]) -> Vec<[f64; 2]> {
    values.iter().map(|z| [z.re, z.im]).collect()
}

pub fn c64_unpairs(pairs: &[[f64; 2]]) -> Vec<C64> {
    pairs.iter().map(|p| C64::new(p[0], p[1])).collect()
}

impl From<&DensityMatrix> for RhoJson {
    fn from(rho: &DensityMatrix) -> Self {
        RhoJson {
            dim: rho.dim,
            basis_labels: rho.basis_labels.clone(),
            matrix: c64_pairs(&rho.matrix),
            raw: c64_pairs(&rho.raw),
            clipped_mass: rho.clipped_mass,
        }
    }
}

impl RhoJson {
    pub fn into_density(self) -> DensityMatrix {
        DensityMatrix {
            dim: self.dim,
            basis_labels: self.basis_labels,
            matrix: c64_unpairs(&self.matrix),
            raw: c64_unpairs(&self.raw),
            clipped_mass: self.clipped_mass,
        }
    }
}

pub fn write_rho_json(path: &Path, rho: &DensityMatrix) -> Result<()> {
    write_json_atomic(path, &RhoJson::from(rho))
}

pub fn read_rho_json(path: &Path) -> Result<DensityMatrix> {
    Ok(read_json::<RhoJson>(path)?.into_density())
}

/// 8-bit PGM heatmap. The data maximum maps to 255 (all-zero data stays
/// black); the absolute scale survives in a `# max=` comment. Negative
/// values clamp to 0, so feed magnitudes.
pub fn write_pgm(path: &Path, width: usize, height: usize, data: &[f64], binary: bool) -> Result<()> {
    if data.len() != width * height {
        return Err(SpdcError::shape(
            "write_pgm",
            format!("{width}x{height}"),
            format!("{} values", data.len()),
        ));
    }
    let max = data.iter().cloned().fold(0.0f64, f64::max);
    let scale = if max > 0.0 { 255.0 / max } else { 0.0 };
    let quantize = |v: f64| ((v.max(0.0) * scale).round() as i64).clamp(0, 255) as u8;
    let mut out: Vec<u8> = Vec::with_capacity(data.len() * 4 + 64);
    let magic = if binary { "P5" } else { "P2" };
    out.extend_from_slice(format!("{magic}\n# max={max}\n{width} {height}\n255\n").as_bytes());
    if binary {
        out.extend(data.iter().map(|&v| quantize(v)));
    } else {
        for row in data.chunks(width) {
            let line: Vec<String> = row.iter().map(|&v| quantize(v).to_string()).collect();
            out.extend_from_slice(line.join(" ").as_bytes());
            out.push(b'\n');
        }
    }
    write_atomic(path, &out)
}

/// Reads back either PGM flavor; returns (width, height, gray levels).
/// Test support for the writers, not a general PGM parser.
pub fn read_pgm(path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    let bytes = fs::read(path).map_err(|e| SpdcError::io(path_str(path), e))?;
    let parse_err = |reason: &str| SpdcError::Parse {
        path: path_str(path),
        reason: reason.to_string(),
    };
    let header_end = {
        // magic, optional comment lines, dimensions, maxval: four '\n's
        // outside comments
        let mut fields = 0;
        let mut pos = 0;
        while fields < 4 && pos < bytes.len() {
            let line_end = bytes[pos..]
                .iter()
                .position(|&b| b == b'\n')
                .map(|i| pos + i)
                .ok_or_else(|| parse_err("truncated header"))?;
            if bytes[pos] != b'#' {
                fields += if fields == 1 { 2 } else { 1 };
            }
            pos = line_end + 1;
        }
        pos
    };
    let header = std::str::from_utf8(&bytes[..header_end])
        .map_err(|_| parse_err("non-utf8 header"))?;
    let mut tokens = header
        .lines()
        .filter(|l| !l.starts_with('#'))
        .flat_map(str::split_whitespace);
    let magic = tokens.next().ok_or_else(|| parse_err("missing magic"))?;
    let width: usize = tokens
        .next()
        .and_then(|t| t.parse().ok())
        .ok_or_else(|| parse_err("bad width"))?;
    let height: usize = tokens
        .next()
        .and_then(|t| t.parse().ok())
        .ok_or_else(|| parse_err("bad height"))?;
    let maxval: usize = tokens
        .next()
        .and_then(|t| t.parse().ok())
        .ok_or_else(|| parse_err("bad maxval"))?;
    if maxval != 255 {
        return Err(parse_err("only 8-bit PGM supported"));
    }
    let gray = match magic {
        "P5" => bytes[header_end..].to_vec(),
        "P2" => std::str::from_utf8(&bytes[header_end..])
            .map_err(|_| parse_err("non-utf8 P2 body"))?
            .split_whitespace()
            .map(|t| t.parse::<u8>().map_err(|_| parse_err("bad P2 sample")))
            .collect::<Result<Vec<u8>>>()?,
        other => return Err(parse_err(&format!("unknown magic `{other}`"))),
    };
    if gray.len() != width * height {
        return Err(parse_err(&format!(
            "expected {} samples, got {}",
            width * height,
            gray.len()
        )));
    }
    Ok((width, height, gray))
}

/// Binary poling volume: raw signed bytes (+1 poled up, -1 poled down) in
/// x-fastest order next to a JSON sidecar holding the geometry. The
/// sidecar is the serialized [`PolingVolume`] minus the voxel payload.
pub fn write_poling_voxels(raw_path: &Path, sidecar_path: &Path, volume: &PolingVolume) -> Result<()> {
    let bytes: Vec<u8> = volume.voxels.iter().map(|&v| v as u8).collect();
    write_atomic(raw_path, &bytes)?;
    write_json_atomic(sidecar_path, volume)
}

pub fn read_poling_voxels(raw_path: &Path, sidecar_path: &Path) -> Result<PolingVolume> {
    let mut volume: PolingVolume = read_json(sidecar_path)?;
    let bytes = fs::read(raw_path).map_err(|e| SpdcError::io(path_str(raw_path), e))?;
    let expected = volume.nx * volume.ny * volume.nz;
    if bytes.len() != expected {
        return Err(SpdcError::Parse {
            path: path_str(raw_path),
            reason: format!("expected {expected} voxels, file has {} bytes", bytes.len()),
        });
    }
    volume.voxels = bytes
        .iter()
        .enumerate()
        .map(|(offset, &b)| match b as i8 {
            1 => Ok(1i8),
            -1 => Ok(-1i8),
            other => Err(SpdcError::Parse {
                path: path_str(raw_path),
                reason: format!("byte offset {offset}: voxel value {other}, want +1/-1"),
            }),
        })
        .collect::<Result<Vec<i8>>>()?;
    Ok(volume)
}

/// Serialized optimizer state. Complex coefficients are `[re, im]` pairs;
/// everything else mirrors [`TrainState`] field-for-field.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointFile {
    pub schema_version: u32,
    pub iteration: usize,
    pub master_seed: u64,
    pub loss_history: Vec<f64>,
    pub adam_m: Vec<f64>,
    pub adam_v: Vec<f64>,
    pub optim: OptimSettings,
    pub pump_basis: ModeSet,
    pub pump_coeffs: Vec<[f64; 2]>,
    pub pump_waists: Vec<f64>,
    pub crystal_basis: ModeSet,
    pub crystal_coeffs: Vec<[f64; 2]>,
    pub crystal_waists: Vec<f64>,
    pub trainable_mask: Vec<bool>,
}

pub const CHECKPOINT_SCHEMA_VERSION: u32 = 1;

pub fn write_checkpoint(path: &Path, state: &TrainState) -> Result<()> {
    let file = CheckpointFile {
        schema_version: CHECKPOINT_SCHEMA_VERSION,
        iteration: state.iteration,
        master_seed: state.master_seed,
        loss_history: state.loss_history.clone(),
        adam_m: state.adam_m.clone(),
        adam_v: state.adam_v.clone(),
        optim: state.optim.clone(),
        pump_basis: state.theta.pump_basis.clone(),
        pump_coeffs: c64_pairs(&state.theta.pump_coeffs),
        pump_waists: state.theta.pump_waists.clone(),
        crystal_basis: state.theta.crystal_basis.clone(),
        crystal_coeffs: c64_pairs(&state.theta.crystal_coeffs),
        crystal_waists: state.theta.crystal_waists.clone(),
        trainable_mask: state.theta.trainable_mask.clone(),
    };
    write_json_atomic(path, &file)
}

pub fn read_checkpoint(path: &Path) -> Result<TrainState> {
    let file: CheckpointFile = read_json(path)?;
    if file.schema_version != CHECKPOINT_SCHEMA_VERSION {
        return Err(SpdcError::Parse {
            path: path_str(path),
            reason: format!(
                "checkpoint schema {} unsupported (expected {CHECKPOINT_SCHEMA_VERSION})",
                file.schema_version
            ),
        });
    }
    let all = TrainGroups {
        pump_coeffs: true,
        pump_waists: true,
        crystal_coeffs: true,
        crystal_waists: true,
    };
    let mut theta = ParamVector::new(
        file.pump_basis,
        c64_unpairs(&file.pump_coeffs),
        file.pump_waists,
        file.crystal_basis,
        c64_unpairs(&file.crystal_coeffs),
        file.crystal_waists,
        all,
    )?;
    if file.trainable_mask.len() != theta.trainable_mask.len() {
        return Err(SpdcError::Parse {
            path: path_str(path),
            reason: format!(
                "trainable mask has {} entries, parameters need {}",
                file.trainable_mask.len(),
                theta.trainable_mask.len()
            ),
        });
    }
    theta.trainable_mask = file.trainable_mask;
    let mut state = TrainState::new(theta, file.optim, file.master_seed)?;
    state.iteration = file.iteration;
    state.loss_history = file.loss_history;
    if file.adam_m.len() != state.adam_m.len() || file.adam_v.len() != state.adam_v.len() {
        return Err(SpdcError::Parse {
            path: path_str(path),
            reason: "adam moment vectors do not match parameter count".to_string(),
        });
    }
    state.adam_m = file.adam_m;
    state.adam_v = file.adam_v;
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inverse::init_theta;
    use crate::modes::{ModeSpec, PostSelect};

    fn tmpdir() -> tempfile::TempDir {
        tempfile::tempdir().unwrap()
    }

    fn sample_matrix() -> CoincidenceMatrix {
        CoincidenceMatrix {
            row_labels: vec!["LG l=-1 p=0".into(), "LG l=0 p=0".into()],
            col_labels: vec!["LG l=-1 p=0".into(), "LG l=0 p=0".into()],
            values: vec![0.125, 1.0 / 3.0, 0.25e-17, 0.5],
            clamped_mass: 0.0,
        }
    }

    #[test]
    fn coincidence_csv_round_trips_bit_exact() {
        let dir = tmpdir();
        let path = dir.path().join("g2.csv");
        let m = sample_matrix();
        write_coincidence_csv(&path, &m).unwrap();
        let back = read_coincidence_csv(&path).unwrap();
        assert_eq!(back.row_labels, m.row_labels);
        assert_eq!(back.col_labels, m.col_labels);
        for (a, b) in back.values.iter().zip(&m.values) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn coincidence_csv_rejects_ragged_rows() {
        let dir = tmpdir();
        let path = dir.path().join("bad.csv");
        fs::write(&path, "mode,a,b\nrow1,0.5\n").unwrap();
        match read_coincidence_csv(&path) {
            Err(SpdcError::Parse { reason, .. }) => assert!(reason.contains("expected 2")),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn loss_csv_round_trips() {
        let dir = tmpdir();
        let path = dir.path().join("loss.csv");
        let losses = vec![1.5, 0.75, 0.374999999999];
        write_loss_csv(&path, &losses).unwrap();
        assert_eq!(read_loss_csv(&path).unwrap(), losses);
    }

    #[test]
    fn pgm_both_flavors_round_trip_and_scale_to_255() {
        let dir = tmpdir();
        let data = vec![0.0, 0.5, 1.0, 2.0, 0.25, -0.1];
        for (name, binary) in [("a.pgm", false), ("b.pgm", true)] {
            let path = dir.path().join(name);
            write_pgm(&path, 3, 2, &data, binary).unwrap();
            let (w, h, gray) = read_pgm(&path).unwrap();
            assert_eq!((w, h), (3, 2));
            assert_eq!(gray.iter().copied().max(), Some(255));
            // negative input clamps to black
            assert_eq!(gray[5], 0);
        }
    }

    #[test]
    fn rho_json_round_trips() {
        let dir = tmpdir();
        let path = dir.path().join("rho.json");
        let rho = DensityMatrix {
            dim: 2,
            basis_labels: vec!["a".into(), "b".into(), "c".into(), "d".into()],
            matrix: (0..16).map(|i| C64::new(i as f64, -(i as f64) / 7.0)).collect(),
            raw: (0..16).map(|i| C64::new(0.5 * i as f64, 0.0)).collect(),
            clipped_mass: 0.03,
        };
        write_rho_json(&path, &rho).unwrap();
        let back = read_rho_json(&path).unwrap();
        assert_eq!(back.dim, 2);
        for (a, b) in back.matrix.iter().zip(&rho.matrix) {
            assert_eq!(a, b);
        }
        assert_eq!(back.clipped_mass, rho.clipped_mass);
    }

    #[test]
    fn checkpoint_round_trips_the_full_state() {
        let dir = tmpdir();
        let path = dir.path().join("ckpt.json");
        let pump = ModeSet::new(
            vec![ModeSpec::lg(0, 0, 40e-6, 0.0), ModeSpec::lg(1, 0, 40e-6, 0.0)],
            PostSelect::None,
        )
        .unwrap();
        let crystal = ModeSet::new(vec![ModeSpec::lg(0, 0, 60e-6, 0.0)], PostSelect::None).unwrap();
        let groups = TrainGroups {
            pump_coeffs: true,
            pump_waists: false,
            crystal_coeffs: true,
            crystal_waists: true,
        };
        let theta = init_theta(pump, crystal, groups, 42).unwrap();
        let mut state = TrainState::new(theta, OptimSettings::default(), 42).unwrap();
        state.iteration = 7;
        state.loss_history = vec![3.0, 2.0, 1.0];
        state.adam_m[2] = 0.125;
        state.adam_v[3] = 0.0625;
        write_checkpoint(&path, &state).unwrap();
        let back = read_checkpoint(&path).unwrap();
        assert_eq!(back.iteration, 7);
        assert_eq!(back.loss_history, state.loss_history);
        assert_eq!(back.master_seed, 42);
        assert_eq!(back.adam_m, state.adam_m);
        assert_eq!(back.adam_v, state.adam_v);
        assert_eq!(back.theta.trainable_mask, state.theta.trainable_mask);
        for (a, b) in back.theta.pump_coeffs.iter().zip(&state.theta.pump_coeffs) {
            assert_eq!(a, b);
        }
        assert_eq!(back.theta.crystal_waists, state.theta.crystal_waists);
    }

    #[test]
    fn corrupted_checkpoint_reports_position() {
        let dir = tmpdir();
        let path = dir.path().join("ckpt.json");
        fs::write(&path, "{\"schema_version\": 1, \"iteration\": oops}").unwrap();
        match read_checkpoint(&path) {
            Err(SpdcError::Parse { reason, .. }) => {
                assert!(reason.contains("line 1 column"), "reason: {reason}");
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn poling_voxels_round_trip_and_flag_bad_bytes() {
        let dir = tmpdir();
        let raw = dir.path().join("vox.i8");
        let sidecar = dir.path().join("vox.json");
        let volume = PolingVolume {
            nx: 2,
            ny: 2,
            nz: 3,
            nz_unit_cells: 1,
            dx: 1e-6,
            dy: 1e-6,
            dz: 2e-6,
            poling_period: 6e-6,
            duty_threshold: 0.01,
            voxels: vec![1, -1, 1, 1, -1, -1, 1, -1, 1, 1, 1, -1],
        };
        write_poling_voxels(&raw, &sidecar, &volume).unwrap();
        let back = read_poling_voxels(&raw, &sidecar).unwrap();
        assert_eq!(back.voxels, volume.voxels);
        assert_eq!(back.poling_period, volume.poling_period);

        let mut bytes = fs::read(&raw).unwrap();
        bytes[5] = 3;
        fs::write(&raw, &bytes).unwrap();
        match read_poling_voxels(&raw, &sidecar) {
            Err(SpdcError::Parse { reason, .. }) => {
                assert!(reason.contains("byte offset 5"), "reason: {reason}");
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn sha256_matches_known_vector() {
        let dir = tmpdir();
        let path = dir.path().join("abc.txt");
        fs::write(&path, "abc").unwrap();
        assert_eq!(
            sha256_hex(&path).unwrap(),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}
