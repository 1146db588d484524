//! Mode-space correlation estimators and the perturbative oracle.
//!
//! The stochastic path projects every propagated realization onto a
//! detection mode set (evaluated at the crystal output facet) and builds
//! normally ordered moments from the c-number samples:
//!
//!   n_j[a,b]    = < conj(A_j_out[a]) A_j_out[b] >
//!   pair[a,b]   = ( <A_i_out[a] A_s_vac[b]> + <A_s_out[b] A_i_vac[a]> ) / 2
//!   cross[a,b]  = < conj(A_i_out[a]) A_s_out[b] >
//!
//! Out fields start from zero, so n_j needs no vacuum subtraction. The
//! Gaussian-state factorization assembles coincidences from these moments.
//!
//! The oracle path evaluates the same coincidence matrix from first-order
//! perturbation theory by direct quadrature, sharing no code with the
//! split-step scheme; agreement between the two is a load-bearing check.

use crate::error::SpdcError;
use crate::grid::{Field2D, SimGrid, WaveParams};
use crate::medium::{coupling_kappa, synth_crystal, synth_pump, DownWave, ParamVector};
use crate::modes::{synth_mode, ModeSet, ModeSpec, PostSelect};
use crate::pool::run_chunked;
use crate::propagator::{
    couplings_from_theta, init_vacuum_one, FieldQuartet, NoiseSpec, StepContext,
};
use crate::Result;
use num_complex::Complex64 as C64;

/// Per-realization complex projections of all four fields onto a mode set.
/// Matrices are row-major [realization * n_modes + mode].
#[derive(Debug, Clone)]
pub struct ModeAmplitudeSamples {
    pub specs: Vec<ModeSpec>,
    pub post_select: PostSelect,
    pub n_realizations: usize,
    pub a_i_out: Vec<C64>,
    pub a_i_vac: Vec<C64>,
    pub a_s_out: Vec<C64>,
    pub a_s_vac: Vec<C64>,
}

impl ModeAmplitudeSamples {
    pub fn n_modes(&self) -> usize {
        self.specs.len()
    }

    fn with_capacity(set: &ModeSet, n_realizations: usize) -> Self {
        let cap = set.len() * n_realizations;
        ModeAmplitudeSamples {
            specs: set.specs.clone(),
            post_select: set.post_select,
            n_realizations,
            a_i_out: Vec::with_capacity(cap),
            a_i_vac: Vec::with_capacity(cap),
            a_s_out: Vec::with_capacity(cap),
            a_s_vac: Vec::with_capacity(cap),
        }
    }
}

/// First-order moment matrices over the full (unfiltered) mode set,
/// row-major [a * n_modes + b].
#[derive(Debug, Clone)]
pub struct CorrelationData {
    pub specs: Vec<ModeSpec>,
    pub post_select: PostSelect,
    pub n_realizations: usize,
    pub n_i: Vec<C64>,
    pub n_s: Vec<C64>,
    pub pair_amp: Vec<C64>,
    pub cross: Vec<C64>,
}

impl CorrelationData {
    pub fn n_modes(&self) -> usize {
        self.specs.len()
    }
}

/// Normalized coincidence probabilities over the post-selected subspace.
/// Rows are idler modes, columns signal modes.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct CoincidenceMatrix {
    pub row_labels: Vec<String>,
    pub col_labels: Vec<String>,
    /// Row-major, entries >= 0, sum = 1.
    pub values: Vec<f64>,
    /// Total negative mass clamped to zero before normalization; nonzero
    /// values are reported by callers, never silently hidden.
    pub clamped_mass: f64,
}

impl CoincidenceMatrix {
    pub fn n_rows(&self) -> usize {
        self.row_labels.len()
    }

    pub fn n_cols(&self) -> usize {
        self.col_labels.len()
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.n_cols() + col]
    }

    /// Sum of |self - other| over entries (both are unit-sum).
    pub fn l1_distance(&self, other: &CoincidenceMatrix) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .sum()
    }
}

/// Indices surviving a post-selection rule (p = 0 or m = 0 ladders).
pub fn postselect_indices(specs: &[ModeSpec], rule: PostSelect) -> Vec<usize> {
    specs
        .iter()
        .enumerate()
        .filter(|(_, s)| match rule {
            PostSelect::LgP0 | PostSelect::HgM0 => s.index2 == 0,
            PostSelect::None => true,
        })
        .map(|(i, _)| i)
        .collect()
}

/// Synthesizes the detection modes at the output facet for wavenumber `k`.
pub(crate) fn detection_fields(set: &ModeSet, grid: &SimGrid, k: f64) -> Result<Vec<Field2D>> {
    let z_out = grid.crystal_length();
    set.specs
        .iter()
        .map(|spec| synth_mode(spec, grid, k, z_out))
        .collect()
}

fn project_quartet(
    q: &FieldQuartet,
    modes_i: &[Field2D],
    modes_s: &[Field2D],
    out: &mut ModeAmplitudeSamples,
) {
    for m in modes_i {
        out.a_i_out.push(m.inner(&q.e_i_out));
    }
    for m in modes_i {
        out.a_i_vac.push(m.inner(&q.e_i_vac));
    }
    for m in modes_s {
        out.a_s_out.push(m.inner(&q.e_s_out));
    }
    for m in modes_s {
        out.a_s_vac.push(m.inner(&q.e_s_vac));
    }
}

/// Projects an already propagated ensemble onto the detection set.
pub fn project_ensemble(
    ensemble: &[FieldQuartet],
    set: &ModeSet,
    grid: &SimGrid,
    waves: &WaveParams,
) -> Result<ModeAmplitudeSamples> {
    set.validate()?;
    let modes_i = detection_fields(set, grid, waves.k_i)?;
    let modes_s = detection_fields(set, grid, waves.k_s)?;
    let mut samples = ModeAmplitudeSamples::with_capacity(set, ensemble.len());
    for q in ensemble {
        if (q.e_i_out.nx, q.e_i_out.ny) != (grid.nx, grid.ny) {
            return Err(SpdcError::shape(
                "project_ensemble",
                format!("{}x{}", grid.nx, grid.ny),
                format!("{}x{}", q.e_i_out.nx, q.e_i_out.ny),
            ));
        }
        project_quartet(q, &modes_i, &modes_s, &mut samples);
    }
    Ok(samples)
}

/// Streaming forward pass: propagates each realization and projects it
/// immediately, so the ensemble is never materialized. Deterministic in
/// chunk order regardless of worker count.
pub fn sample_mode_amplitudes(
    theta: &ParamVector,
    amplitude: f64,
    waves: &WaveParams,
    grid: &SimGrid,
    noise: &NoiseSpec,
    set: &ModeSet,
    workers: usize,
) -> Result<ModeAmplitudeSamples> {
    noise.validate()?;
    set.validate()?;
    let profile = couplings_from_theta(theta, amplitude, waves, grid)?;
    let modes_i = detection_fields(set, grid, waves.k_i)?;
    let modes_s = detection_fields(set, grid, waves.k_s)?;
    let proto = StepContext::new(grid, waves);
    let chunk_results: Vec<Result<ModeAmplitudeSamples>> = run_chunked(
        noise.n_realizations,
        workers,
        || proto.clone(),
        |ctx, range| {
            let mut part = ModeAmplitudeSamples::with_capacity(set, range.len());
            for r in range {
                let mut q = init_vacuum_one(noise, r as u64, grid);
                ctx.propagate(&mut q, &profile)?;
                project_quartet(&q, &modes_i, &modes_s, &mut part);
            }
            Ok(part)
        },
    );
    let mut samples = ModeAmplitudeSamples::with_capacity(set, noise.n_realizations);
    for chunk in chunk_results {
        let part = chunk?;
        samples.a_i_out.extend(part.a_i_out);
        samples.a_i_vac.extend(part.a_i_vac);
        samples.a_s_out.extend(part.a_s_out);
        samples.a_s_vac.extend(part.a_s_vac);
    }
    Ok(samples)
}

/// Ensemble averages of the second-order moment combinations. Reductions
/// run in realization order, so results are bitwise reproducible.
pub fn first_order_moments(samples: &ModeAmplitudeSamples) -> Result<CorrelationData> {
    let n = samples.n_realizations;
    if n < 2 {
        return Err(SpdcError::config(
            "first_order_moments",
            format!("need >= 2 realizations, got {n}"),
        ));
    }
    let nm = samples.n_modes();
    let mut n_i = vec![C64::new(0.0, 0.0); nm * nm];
    let mut n_s = vec![C64::new(0.0, 0.0); nm * nm];
    let mut pair = vec![C64::new(0.0, 0.0); nm * nm];
    let mut cross = vec![C64::new(0.0, 0.0); nm * nm];
    for r in 0..n {
        let row = &samples.a_i_out[r * nm..(r + 1) * nm];
        let row_s = &samples.a_s_out[r * nm..(r + 1) * nm];
        let row_iv = &samples.a_i_vac[r * nm..(r + 1) * nm];
        let row_sv = &samples.a_s_vac[r * nm..(r + 1) * nm];
        for a in 0..nm {
            for b in 0..nm {
                let idx = a * nm + b;
                n_i[idx] += row[a].conj() * row[b];
                n_s[idx] += row_s[a].conj() * row_s[b];
                pair[idx] += 0.5 * (row[a] * row_sv[b] + row_s[b] * row_iv[a]);
                cross[idx] += row[a].conj() * row_s[b];
            }
        }
    }
    let inv = 1.0 / n as f64;
    for m in [&mut n_i, &mut n_s, &mut pair, &mut cross] {
        for v in m.iter_mut() {
            *v *= inv;
        }
    }
    Ok(CorrelationData {
        specs: samples.specs.clone(),
        post_select: samples.post_select,
        n_realizations: n,
        n_i,
        n_s,
        pair_amp: pair,
        cross,
    })
}

/// Gaussian-state coincidence matrix over the post-selected subspace:
/// G2[a,b] = n_i[a,a] n_s[b,b] + |pair[a,b]|^2 + |cross[a,b]|^2, clamped at
/// zero and normalized to unit sum.
pub fn g2(corr: &CorrelationData, rule: PostSelect) -> Result<CoincidenceMatrix> {
    let keep = postselect_indices(&corr.specs, rule);
    if keep.is_empty() {
        return Err(SpdcError::config(
            "g2.postselect",
            "post-selection removed every mode",
        ));
    }
    let nm = corr.n_modes();
    let mut values = Vec::with_capacity(keep.len() * keep.len());
    let mut clamped = 0.0;
    for &a in &keep {
        for &b in &keep {
            let idx = a * nm + b;
            let raw = corr.n_i[a * nm + a].re * corr.n_s[b * nm + b].re
                + corr.pair_amp[idx].norm_sqr()
                + corr.cross[idx].norm_sqr();
            if raw < 0.0 {
                clamped += -raw;
                values.push(0.0);
            } else {
                values.push(raw);
            }
        }
    }
    let total: f64 = values.iter().sum();
    if !(total > 0.0) || !total.is_finite() {
        return Err(SpdcError::Normalization {
            context: "g2".into(),
            reason: format!("coincidence mass {total:.3e} cannot be normalized"),
        });
    }
    for v in &mut values {
        *v /= total;
    }
    let labels: Vec<String> = keep.iter().map(|&i| corr.specs[i].label()).collect();
    Ok(CoincidenceMatrix {
        row_labels: labels.clone(),
        col_labels: labels,
        values,
        clamped_mass: clamped,
    })
}

/// First-order perturbative coincidence matrix by direct quadrature:
///
///   Phi[a,b] = int_0^L dz e^{-i delta_k z}
///              int dr kappa_bar(r, z) conj(u_a(r,z)) conj(u_b(r,z))
///
/// with analytic diffracting detection modes and kappa_bar the mean of the
/// signal/idler couplings at plane z (the pump envelope diffracts too). The
/// z integral uses composite Simpson with `zeta_intervals` panels (rounded
/// up to even). Shares no propagation code with the split-step path.
pub fn first_order_oracle(
    theta: &ParamVector,
    amplitude: f64,
    waves: &WaveParams,
    grid: &SimGrid,
    set_i: &ModeSet,
    set_s: &ModeSet,
    zeta_intervals: usize,
) -> Result<CoincidenceMatrix> {
    set_i.validate()?;
    set_s.validate()?;
    let crystal = synth_crystal(theta, grid, waves)?;
    let keep_i = postselect_indices(&set_i.specs, set_i.post_select);
    let keep_s = postselect_indices(&set_s.specs, set_s.post_select);
    if keep_i.is_empty() || keep_s.is_empty() {
        return Err(SpdcError::config(
            "oracle.postselect",
            "post-selection removed every detection mode",
        ));
    }
    let m = zeta_intervals.max(2) + zeta_intervals.max(2) % 2;
    let length = grid.crystal_length();
    let h = length / m as f64;
    let mut phi = vec![C64::new(0.0, 0.0); keep_i.len() * keep_s.len()];
    let da = grid.cell_area();
    for node in 0..=m {
        let zeta = node as f64 * h;
        let simpson = if node == 0 || node == m {
            1.0
        } else if node % 2 == 1 {
            4.0
        } else {
            2.0
        };
        let weight = simpson * h / 3.0;
        let carrier = C64::new(0.0, -waves.delta_k * zeta).exp() * weight * da;
        let pump = synth_pump(theta, grid, waves, amplitude, zeta)?;
        let mut kappa_bar = coupling_kappa(&pump, &crystal, waves, DownWave::Idler)?;
        let kappa_s = coupling_kappa(&pump, &crystal, waves, DownWave::Signal)?;
        for (k, ks) in kappa_bar.data.iter_mut().zip(&kappa_s.data) {
            *k = 0.5 * (*k + ks);
        }
        // idler-mode-weighted source fields at this plane
        let mut sources = Vec::with_capacity(keep_i.len());
        for &qi in &keep_i {
            let u = synth_mode(&set_i.specs[qi], grid, waves.k_i, zeta)?;
            let mut src = kappa_bar.clone();
            for (s, m) in src.data.iter_mut().zip(&u.data) {
                *s *= m.conj();
            }
            sources.push(src);
        }
        for (col, &qs) in keep_s.iter().enumerate() {
            let u_s = synth_mode(&set_s.specs[qs], grid, waves.k_s, zeta)?;
            for (row, src) in sources.iter().enumerate() {
                let mut acc = C64::new(0.0, 0.0);
                for (s, us) in src.data.iter().zip(&u_s.data) {
                    acc += s * us.conj();
                }
                phi[row * keep_s.len() + col] += carrier * acc;
            }
        }
    }
    let mut values: Vec<f64> = phi.iter().map(|v| v.norm_sqr()).collect();
    let total: f64 = values.iter().sum();
    if !(total > 0.0) || !total.is_finite() {
        return Err(SpdcError::Normalization {
            context: "first_order_oracle".into(),
            reason: format!("biphoton mass {total:.3e} cannot be normalized"),
        });
    }
    for v in &mut values {
        *v /= total;
    }
    Ok(CoincidenceMatrix {
        row_labels: keep_i.iter().map(|&i| set_i.specs[i].label()).collect(),
        col_labels: keep_s.iter().map(|&i| set_s.specs[i].label()).collect(),
        values,
        clamped_mass: 0.0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{build_grid, wave_params, Poling};
    use crate::medium::TrainGroups;
    use crate::modes::Basis;
    use crate::propagator::init_vacuum;

    fn grid32() -> SimGrid {
        build_grid(32, 32, 4e-6, 4e-6, 50e-6, 1e-3).unwrap()
    }

    fn waves() -> WaveParams {
        wave_params(
            405e-9, 810e-9, 810e-9, 1.692, 1.661, 1.661, 3.6e-12,
            Poling::AutoQpm,
        )
        .unwrap()
    }

    fn lg_detection(l_max: i32, w: f64, length: f64) -> ModeSet {
        ModeSet::new(
            (-l_max..=l_max)
                .map(|l| ModeSpec::lg(l, 0, w, length / 2.0))
                .collect(),
            PostSelect::LgP0,
        )
        .unwrap()
    }

    fn gaussian_theta(pump_w: f64, crystal_w: f64, pump_l: i32) -> ParamVector {
        let pump =
            ModeSet::new(vec![ModeSpec::lg(pump_l, 0, pump_w, 0.0)], PostSelect::None).unwrap();
        let crystal =
            ModeSet::new(vec![ModeSpec::lg(0, 0, crystal_w, 0.0)], PostSelect::None).unwrap();
        ParamVector::new(
            pump,
            vec![C64::new(1.0, 0.0)],
            vec![pump_w],
            crystal,
            vec![C64::new(1.0, 0.0)],
            vec![crystal_w],
            TrainGroups {
                pump_coeffs: true,
                pump_waists: false,
                crystal_coeffs: true,
                crystal_waists: false,
            },
        )
        .unwrap()
    }

    fn noise(n: usize) -> NoiseSpec {
        NoiseSpec {
            n_realizations: n,
            master_seed: 11,
            noise_std: 1.0,
        }
    }

    #[test]
    fn vacuum_projection_variance_is_mode_independent() {
        // white noise projected onto orthonormal modes has variance
        // 2 std^2 dA in every mode
        let g = grid32();
        let w = waves();
        let spec = noise(800);
        let ensemble = init_vacuum(&spec, &g).unwrap();
        let set = lg_detection(2, 24e-6, g.crystal_length());
        let samples = project_ensemble(&ensemble, &set, &g, &w).unwrap();
        let nm = samples.n_modes();
        assert_eq!(samples.a_s_vac.len(), 800 * nm);
        let mut vars = vec![0.0; nm];
        for r in 0..800 {
            for q in 0..nm {
                vars[q] += samples.a_s_vac[r * nm + q].norm_sqr();
            }
        }
        for v in &mut vars {
            *v /= 800.0;
        }
        let expect = spec.mode_variance(&g);
        let mean: f64 = vars.iter().sum::<f64>() / nm as f64;
        assert!(
            (mean - expect).abs() < 0.1 * expect,
            "mean variance {mean:.3e} vs expected {expect:.3e}"
        );
        for (q, v) in vars.iter().enumerate() {
            assert!(
                (v - mean).abs() < 0.1 * mean,
                "mode {q} variance {v:.3e} strays from mean {mean:.3e}"
            );
        }
    }

    #[test]
    fn zero_coupling_run_yields_normalization_error() {
        let g = grid32();
        let w = waves();
        let mut theta = gaussian_theta(40e-6, 80e-6, 0);
        theta.pump_coeffs[0] = C64::new(0.0, 0.0);
        let set = lg_detection(1, 24e-6, g.crystal_length());
        let samples =
            sample_mode_amplitudes(&theta, 0.03, &w, &g, &noise(8), &set, 1).unwrap();
        assert!(samples.a_i_out.iter().all(|a| a.norm() == 0.0));
        let corr = first_order_moments(&samples).unwrap();
        let err = g2(&corr, PostSelect::LgP0);
        assert!(matches!(err, Err(SpdcError::Normalization { .. })));
    }

    #[test]
    fn moment_matrices_are_exactly_hermitian() {
        let g = grid32();
        let w = waves();
        let theta = gaussian_theta(40e-6, 80e-6, 0);
        let set = lg_detection(1, 24e-6, g.crystal_length());
        let samples =
            sample_mode_amplitudes(&theta, 0.03, &w, &g, &noise(16), &set, 2).unwrap();
        let corr = first_order_moments(&samples).unwrap();
        let nm = corr.n_modes();
        for a in 0..nm {
            assert!(corr.n_i[a * nm + a].im == 0.0);
            assert!(corr.n_i[a * nm + a].re >= 0.0);
            for b in 0..nm {
                assert_eq!(corr.n_i[a * nm + b], corr.n_i[b * nm + a].conj());
                assert_eq!(corr.n_s[a * nm + b], corr.n_s[b * nm + a].conj());
            }
        }
    }

    #[test]
    fn single_entry_pair_concentrates_g2() {
        // hand-built correlation data: one pair amplitude, no singles
        let specs = vec![
            ModeSpec::lg(-1, 0, 24e-6, 0.0),
            ModeSpec::lg(1, 0, 24e-6, 0.0),
        ];
        let corr = CorrelationData {
            specs,
            post_select: PostSelect::LgP0,
            n_realizations: 100,
            n_i: vec![C64::new(0.0, 0.0); 4],
            n_s: vec![C64::new(0.0, 0.0); 4],
            pair_amp: vec![
                C64::new(0.0, 0.0),
                C64::new(3e-4, 4e-4),
                C64::new(0.0, 0.0),
                C64::new(0.0, 0.0),
            ],
            cross: vec![C64::new(0.0, 0.0); 4],
        };
        let m = g2(&corr, PostSelect::LgP0).unwrap();
        assert_eq!(m.values, vec![0.0, 1.0, 0.0, 0.0]);
        assert_eq!(m.clamped_mass, 0.0);
    }

    #[test]
    fn postselection_filters_radial_ladder() {
        let specs = vec![
            ModeSpec::lg(0, 0, 24e-6, 0.0),
            ModeSpec::lg(0, 1, 24e-6, 0.0),
            ModeSpec::lg(1, 0, 24e-6, 0.0),
        ];
        assert_eq!(postselect_indices(&specs, PostSelect::LgP0), vec![0, 2]);
        assert_eq!(
            postselect_indices(&specs, PostSelect::None),
            vec![0, 1, 2]
        );
        let hg = vec![
            ModeSpec::hg(0, 0, 24e-6, 0.0),
            ModeSpec::hg(1, 1, 24e-6, 0.0),
            ModeSpec::hg(2, 0, 24e-6, 0.0),
        ];
        assert_eq!(postselect_indices(&hg, PostSelect::HgM0), vec![0, 2]);
    }

    #[test]
    fn oracle_enforces_oam_conservation() {
        let g = grid32();
        let w = waves();
        let theta = gaussian_theta(40e-6, 80e-6, 0);
        let set = lg_detection(1, 24e-6, g.crystal_length());
        let oracle =
            first_order_oracle(&theta, 0.03, &w, &g, &set, &set, 20).unwrap();
        let peak = oracle.values.iter().cloned().fold(0.0, f64::max);
        // l_p = 0: only l_i + l_s = 0 entries survive
        let ls: Vec<i32> = vec![-1, 0, 1];
        for (i, &li) in ls.iter().enumerate() {
            for (j, &lsig) in ls.iter().enumerate() {
                let v = oracle.get(i, j);
                if li + lsig != 0 {
                    assert!(
                        v < 1e-3 * peak,
                        "l=({li},{lsig}) leaked {v:.3e} vs peak {peak:.3e}"
                    );
                }
            }
        }
        // the anti-diagonal carries everything
        let mass: f64 = (0..3).map(|i| oracle.get(i, 2 - i)).sum();
        assert!(mass > 0.999);
    }

    #[test]
    fn oracle_shifts_diagonal_with_pump_oam() {
        let g = grid32();
        let w = waves();
        let theta = gaussian_theta(40e-6, 80e-6, 1); // pump carries l = 1
        let set = lg_detection(1, 24e-6, g.crystal_length());
        let oracle =
            first_order_oracle(&theta, 0.03, &w, &g, &set, &set, 20).unwrap();
        let ls: Vec<i32> = vec![-1, 0, 1];
        let mut on = 0.0;
        let mut off = 0.0;
        for (i, &li) in ls.iter().enumerate() {
            for (j, &lsig) in ls.iter().enumerate() {
                if li + lsig == 1 {
                    on += oracle.get(i, j);
                } else {
                    off += oracle.get(i, j);
                }
            }
        }
        assert!(on > 0.999, "on-diagonal mass {on}");
        assert!(off < 1e-3, "off-diagonal mass {off}");
    }

    #[test]
    fn thin_crystal_oracle_reduces_to_transverse_overlap() {
        // with delta_k = 0 and a single z panel the integral collapses to
        // the overlap at the facet planes; use a thin crystal so the modes
        // barely diffract and compare against a direct midpoint evaluation
        let g = build_grid(32, 32, 4e-6, 4e-6, 0.5e-6, 1e-6).unwrap();
        let mut w = waves();
        w.delta_k = 0.0;
        let theta = gaussian_theta(40e-6, 80e-6, 0);
        let set = ModeSet::new(
            vec![
                ModeSpec::lg(-1, 0, 24e-6, 0.5e-6),
                ModeSpec::lg(0, 0, 24e-6, 0.5e-6),
                ModeSpec::lg(1, 0, 24e-6, 0.5e-6),
            ],
            PostSelect::LgP0,
        )
        .unwrap();
        let oracle = first_order_oracle(&theta, 1.0, &w, &g, &set, &set, 2).unwrap();
        // direct overlaps at the waist plane for the two allowed entries
        // (-1,+1) and (0,0); forbidden entries would be rounding noise
        let profile = couplings_from_theta(&theta, 1.0, &w, &g).unwrap();
        let mid = &profile.planes[1];
        let um = synth_mode(&set.specs[0], &g, w.k_i, 0.5e-6).unwrap();
        let u0 = synth_mode(&set.specs[1], &g, w.k_i, 0.5e-6).unwrap();
        let up = synth_mode(&set.specs[2], &g, w.k_s, 0.5e-6).unwrap();
        let mut overlap00 = C64::new(0.0, 0.0);
        let mut overlap_mp = C64::new(0.0, 0.0);
        for c in 0..g.len() {
            let kb = 0.5 * (mid.kappa_i.data[c] + mid.kappa_s.data[c]);
            overlap00 += kb * u0.data[c].conj() * u0.data[c].conj();
            overlap_mp += kb * um.data[c].conj() * up.data[c].conj();
        }
        let expect_ratio = overlap_mp.norm_sqr() / overlap00.norm_sqr();
        let got_ratio = oracle.get(0, 2) / oracle.get(1, 1);
        assert!(
            (got_ratio - expect_ratio).abs() < 1e-6 * expect_ratio.max(1e-30),
            "ratio {got_ratio:.6e} vs overlap {expect_ratio:.6e}"
        );
    }

    #[test]
    fn stochastic_g2_tracks_the_oracle() {
        // smoke-sized version of the oracle-equivalence contract; the full
        // N = 2000 / 0.05 gate runs in the acceptance suite
        let g = grid32();
        let w = waves();
        let theta = gaussian_theta(40e-6, 80e-6, 0);
        let set = lg_detection(1, 24e-6, g.crystal_length());
        let samples =
            sample_mode_amplitudes(&theta, 0.03, &w, &g, &noise(600), &set, 2).unwrap();
        let corr = first_order_moments(&samples).unwrap();
        let stochastic = g2(&corr, PostSelect::LgP0).unwrap();
        let oracle =
            first_order_oracle(&theta, 0.03, &w, &g, &set, &set, 20).unwrap();
        let l1 = stochastic.l1_distance(&oracle);
        assert!(l1 < 0.1, "stochastic vs oracle L1 = {l1:.3}");
    }

    #[test]
    fn degenerate_g2_is_swap_symmetric() {
        let g = grid32();
        let w = waves();
        let theta = gaussian_theta(40e-6, 80e-6, 0);
        let set = lg_detection(1, 24e-6, g.crystal_length());
        let samples =
            sample_mode_amplitudes(&theta, 0.03, &w, &g, &noise(600), &set, 2).unwrap();
        let corr = first_order_moments(&samples).unwrap();
        let m = g2(&corr, PostSelect::LgP0).unwrap();
        let n = m.n_rows();
        let mut asym = 0.0;
        for i in 0..n {
            for j in 0..n {
                asym += (m.get(i, j) - m.get(j, i)).abs();
            }
        }
        assert!(asym < 0.15, "swap asymmetry {asym:.3}");
    }

    #[test]
    fn oracle_and_g2_share_label_conventions() {
        let g = grid32();
        let w = waves();
        let theta = gaussian_theta(40e-6, 80e-6, 0);
        let set = lg_detection(1, 24e-6, g.crystal_length());
        let samples =
            sample_mode_amplitudes(&theta, 0.03, &w, &g, &noise(4), &set, 1).unwrap();
        let corr = first_order_moments(&samples).unwrap();
        let m = g2(&corr, PostSelect::LgP0).unwrap();
        let oracle = first_order_oracle(&theta, 0.03, &w, &g, &set, &set, 8).unwrap();
        assert_eq!(m.row_labels, oracle.row_labels);
        assert_eq!(m.col_labels, oracle.col_labels);
        assert_eq!(m.row_labels[0], "LG l=-1 p=0");
        assert_eq!(set.specs[0].basis, Basis::LG);
    }
}
