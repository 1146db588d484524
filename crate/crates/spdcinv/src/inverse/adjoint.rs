//! Reverse-mode gradient assembly: loss heads over the estimators, moment
//! and projection transposes down to per-realization field cotangents, the
//! taped propagation sweep, and the chain back to the flattened parameter
//! vector.
//!
//! Cotangent convention throughout: for a real loss L and a complex scalar
//! z, the stored cotangent is dL/d(conj z), so the flattened real gradient
//! of a coefficient is (2 Re g, 2 Im g). Reductions over realizations run
//! in fixed chunk order, which keeps gradients bitwise reproducible for
//! any worker count.

use crate::error::SpdcError;
use crate::grid::{Field2D, SimGrid, WaveParams, SPEED_OF_LIGHT};
use crate::medium::{synth_crystal, ParamVector};
use crate::modes::{synth_mode_with_waist_derivative, ModeSpec};
use crate::observables::{postselect_indices, CoincidenceMatrix, CorrelationData, ModeAmplitudeSamples};
use crate::pool::run_chunked;
use crate::propagator::{
    init_vacuum_one, CouplingPair, CouplingProfile, FieldQuartet, NoiseSpec, StepContext,
};
use crate::tomography::{
    eigen_hermitian, pair_rate_parts, reconstruction_map, reconstruct_rho, simulate_projections,
    submatrix, ProjectionRecord,
};
use crate::Result;
use num_complex::Complex64 as C64;

const ZERO: C64 = C64::new(0.0, 0.0);

/// Probability floor shared by the KL divergence and its derivative.
pub(crate) const KL_FLOOR: f64 = 1e-7;

/// Loss value plus cotangents of the four moment matrices, full-size
/// (n_modes x n_modes) with zeros outside the block the head touched.
pub(crate) struct HeadResult {
    pub loss: f64,
    pub g_ni: Vec<C64>,
    pub g_ns: Vec<C64>,
    pub g_pair: Vec<C64>,
    pub g_cross: Vec<C64>,
}

impl HeadResult {
    fn zeros(loss: f64, nm: usize) -> Self {
        HeadResult {
            loss,
            g_ni: vec![ZERO; nm * nm],
            g_ns: vec![ZERO; nm * nm],
            g_pair: vec![ZERO; nm * nm],
            g_cross: vec![ZERO; nm * nm],
        }
    }
}

/// KL(T || P) with both distributions floored at KL_FLOOR and renormalized,
/// plus dKL/dP per entry. The floored target is a constant of the problem,
/// so only the P-side renormalization enters the derivative.
fn kl_divergence_with_grad(target: &[f64], p: &[f64]) -> (f64, Vec<f64>) {
    let zt: f64 = target.iter().map(|t| t.max(KL_FLOOR)).sum();
    let zp: f64 = p.iter().map(|v| v.max(KL_FLOOR)).sum();
    let mut kl = 0.0;
    let mut grad = vec![0.0; p.len()];
    for k in 0..p.len() {
        let tq = target[k].max(KL_FLOOR) / zt;
        let pq = p[k].max(KL_FLOOR) / zp;
        kl += tq * (tq / pq).ln();
        if p[k] > KL_FLOOR {
            grad[k] = (1.0 - tq / pq) / zp;
        }
    }
    (kl, grad)
}

/// Coincidence-target head: rebuilds the post-selected rate matrix exactly
/// as `observables::g2` does (same loops, same order, so the loss matches
/// what callers see), evaluates w_kl * KL + w_l1 * L1 against the target,
/// and transposes through the unit-sum normalization into cotangents of
/// the moment matrices.
pub(crate) fn coincidence_head(
    corr: &CorrelationData,
    target: &CoincidenceMatrix,
    w_kl: f64,
    w_l1: f64,
) -> Result<HeadResult> {
    let keep = postselect_indices(&corr.specs, corr.post_select);
    if keep.is_empty() {
        return Err(SpdcError::config(
            "coincidence_head.postselect",
            "post-selection removed every mode",
        ));
    }
    let labels: Vec<String> = keep.iter().map(|&i| corr.specs[i].label()).collect();
    if target.row_labels != labels || target.col_labels != labels {
        return Err(SpdcError::shape(
            "coincidence target labels",
            labels.join(", "),
            format!(
                "{} / {}",
                target.row_labels.join(", "),
                target.col_labels.join(", ")
            ),
        ));
    }
    let nm = corr.n_modes();
    let kk = keep.len();
    let mut raw = Vec::with_capacity(kk * kk);
    let mut clamped = vec![false; kk * kk];
    for &a in &keep {
        for &b in &keep {
            let idx = a * nm + b;
            let r = corr.n_i[a * nm + a].re * corr.n_s[b * nm + b].re
                + corr.pair_amp[idx].norm_sqr()
                + corr.cross[idx].norm_sqr();
            if r < 0.0 {
                clamped[raw.len()] = true;
                raw.push(0.0);
            } else {
                raw.push(r);
            }
        }
    }
    let total: f64 = raw.iter().sum();
    if !(total > 0.0) || !total.is_finite() {
        return Err(SpdcError::Normalization {
            context: "coincidence_head".into(),
            reason: format!("coincidence mass {total:.3e} cannot be normalized"),
        });
    }
    let p: Vec<f64> = raw.iter().map(|r| r / total).collect();

    let (kl, kl_grad) = kl_divergence_with_grad(&target.values, &p);
    let mut l1 = 0.0;
    let mut dp = vec![0.0; p.len()];
    for k in 0..p.len() {
        let diff = p[k] - target.values[k];
        l1 += diff.abs();
        let sgn = if diff > 0.0 {
            1.0
        } else if diff < 0.0 {
            -1.0
        } else {
            0.0
        };
        dp[k] = w_kl * kl_grad[k] + w_l1 * sgn;
    }
    let loss = w_kl * kl + w_l1 * l1;

    // unit-sum normalization transpose: dL/d(raw_k) couples every entry
    // through the total
    let inner: f64 = dp.iter().zip(&p).map(|(g, v)| g * v).sum();
    let mut head = HeadResult::zeros(loss, nm);
    for (ai, &a) in keep.iter().enumerate() {
        for (bi, &b) in keep.iter().enumerate() {
            let k = ai * kk + bi;
            // a clamped rate has zero slope in every moment
            if clamped[k] {
                continue;
            }
            let d_raw = (dp[k] - inner) / total;
            if d_raw == 0.0 {
                continue;
            }
            let idx = a * nm + b;
            head.g_ni[a * nm + a] += C64::new(0.5 * d_raw * corr.n_s[b * nm + b].re, 0.0);
            head.g_ns[b * nm + b] += C64::new(0.5 * d_raw * corr.n_i[a * nm + a].re, 0.0);
            head.g_pair[idx] += d_raw * corr.pair_amp[idx];
            head.g_cross[idx] += d_raw * corr.cross[idx];
        }
    }
    Ok(head)
}

/// Density-matrix head: runs the tomography pipeline on the computational
/// block, takes w_trace * trace distance between the raw (un-clipped)
/// reconstruction and the target, and transposes the whole linear chain
/// (eigenvalue subgradient -> generator expansion -> plan probabilities ->
/// projection rates -> restricted quadratic forms) into moment cotangents.
pub(crate) fn density_head(
    corr: &CorrelationData,
    rho_target: &[C64],
    dim: usize,
    comp_modes: &[usize],
    w_trace: f64,
) -> Result<HeadResult> {
    let map = reconstruction_map(dim)?;
    let s = map.states.len();
    let n = dim * dim;
    if rho_target.len() != n * n {
        return Err(SpdcError::shape(
            "density target",
            format!("{n}x{n}"),
            format!("{} entries", rho_target.len()),
        ));
    }
    let nm = corr.n_modes();

    // plan in row-major state-pair order; probabilities via the same
    // simulate path inference uses, so the loss matches reported matrices
    let plan: Vec<ProjectionRecord> = map
        .states
        .iter()
        .flat_map(|a| {
            map.states.iter().map(move |b| ProjectionRecord {
                projector_i: a.clone(),
                projector_s: b.clone(),
                probability: 0.0,
            })
        })
        .collect();
    let records = simulate_projections(&plan, corr, comp_modes)?;
    let rho = reconstruct_rho(&records, dim)?;

    // trace-distance subgradient G = sum_k sign(lambda_k) v_k v_k^dag on
    // the raw reconstruction
    let delta: Vec<C64> = rho
        .raw
        .iter()
        .zip(rho_target)
        .map(|(a, b)| a - b)
        .collect();
    let (eigs, vecs) = eigen_hermitian(&delta, n);
    let td = 0.5 * eigs.iter().map(|e| e.abs()).sum::<f64>();
    let loss = w_trace * td;
    let mut g_mat = vec![ZERO; n * n];
    for (k, lam) in eigs.iter().enumerate() {
        let sgn = if *lam > 0.0 {
            1.0
        } else if *lam < 0.0 {
            -1.0
        } else {
            continue;
        };
        for r in 0..n {
            for c in 0..n {
                g_mat[r * n + c] += sgn * vecs[r * n + k] * vecs[c * n + k].conj();
            }
        }
    }

    // S2[m][nn] = Re tr(G (sigma_m x sigma_nn)); the hermitization inside
    // the reconstruction reduces to taking the real part here because G is
    // Hermitian
    let n_gen = map.gens.matrices.len();
    let mut s2 = vec![0.0; n_gen * n_gen];
    for m in 0..n_gen {
        let sm = &map.gens.matrices[m];
        for nn in 0..n_gen {
            let sn = &map.gens.matrices[nn];
            let mut acc = ZERO;
            for r1 in 0..dim {
                for c1 in 0..dim {
                    let aa = sm[c1 * dim + r1];
                    if aa == ZERO {
                        continue;
                    }
                    for r2 in 0..dim {
                        for c2 in 0..dim {
                            acc += g_mat[(r1 * dim + r2) * n + (c1 * dim + c2)]
                                * aa
                                * sn[c2 * dim + r2];
                        }
                    }
                }
            }
            s2[m * n_gen + nn] = acc.re;
        }
    }

    // dL/dp over plan probabilities through the generator double expansion
    let mut gp = vec![0.0; s * s];
    for m in 0..n_gen {
        for i in 0..dim {
            let u = map.lookup[m][i];
            let li = map.gens.eigenvalues[m][i];
            for nn in 0..n_gen {
                for j in 0..dim {
                    let v = map.lookup[nn][j];
                    gp[u * s + v] += 0.5 * w_trace * li * map.gens.eigenvalues[nn][j]
                        * s2[m * n_gen + nn]
                        / (map.norms[m] * map.norms[nn]);
                }
            }
        }
    }

    // normalization transpose: p = rate / z with z the total rate over
    // computational basis pairs
    let ni = submatrix(&corr.n_i, nm, comp_modes);
    let ns = submatrix(&corr.n_s, nm, comp_modes);
    let pr = submatrix(&corr.pair_amp, nm, comp_modes);
    let cr = submatrix(&corr.cross, nm, comp_modes);
    let mut z = 0.0;
    for k in 0..dim {
        for l in 0..dim {
            let idx = k * dim + l;
            z += ni[k * dim + k].re * ns[l * dim + l].re
                + pr[idx].norm_sqr()
                + cr[idx].norm_sqr();
        }
    }
    if !(z > 0.0) || !z.is_finite() {
        return Err(SpdcError::Normalization {
            context: "density_head".into(),
            reason: format!("computational-basis rate {z:.3e}"),
        });
    }
    let comp_state: Vec<usize> = (0..dim)
        .map(|k| {
            map.states
                .iter()
                .position(|st| st[k].norm_sqr() > 1.0 - 1e-9)
                .ok_or_else(|| {
                    SpdcError::config(
                        "density_head",
                        format!("computational state |{k}> missing from the plan"),
                    )
                })
        })
        .collect::<Result<_>>()?;
    let inner: f64 = gp
        .iter()
        .zip(records.iter())
        .map(|(g, rec)| g * rec.probability)
        .sum();
    let mut d_rate = vec![0.0; s * s];
    for k in 0..s * s {
        d_rate[k] = gp[k] / z;
    }
    for &a in &comp_state {
        for &b in &comp_state {
            d_rate[a * s + b] -= inner / z;
        }
    }

    // rate transpose: back through the four quadratic forms of each
    // projector pair into the restricted moment blocks
    let mut g_ni_sub = vec![ZERO; dim * dim];
    let mut g_ns_sub = vec![ZERO; dim * dim];
    let mut g_pair_sub = vec![ZERO; dim * dim];
    let mut g_cross_sub = vec![ZERO; dim * dim];
    for u in 0..s {
        for v in 0..s {
            let dr = d_rate[u * s + v];
            if dr == 0.0 {
                continue;
            }
            let su = &map.states[u];
            let sv = &map.states[v];
            let (n_u, n_v, p_uv, c_uv) = pair_rate_parts(su, sv, &ni, &ns, &pr, &cr);
            let g_nu = 0.5 * dr * n_v.re;
            let g_nv = 0.5 * dr * n_u.re;
            let g_p = dr * p_uv;
            let g_c = dr * c_uv;
            for k in 0..dim {
                for l in 0..dim {
                    let idx = k * dim + l;
                    g_ni_sub[idx] += su[k].conj() * su[l] * g_nu;
                    g_ns_sub[idx] += sv[k].conj() * sv[l] * g_nv;
                    g_pair_sub[idx] += su[k] * sv[l] * g_p;
                    g_cross_sub[idx] += su[k].conj() * sv[l] * g_c;
                }
            }
        }
    }
    let mut head = HeadResult::zeros(loss, nm);
    for (a, &ma) in comp_modes.iter().enumerate() {
        for (b, &mb) in comp_modes.iter().enumerate() {
            let full = ma * nm + mb;
            let sub = a * dim + b;
            head.g_ni[full] += g_ni_sub[sub];
            head.g_ns[full] += g_ns_sub[sub];
            head.g_pair[full] += g_pair_sub[sub];
            head.g_cross[full] += g_cross_sub[sub];
        }
    }
    Ok(head)
}

/// Per-realization cotangents of the projected mode amplitudes, laid out
/// like `ModeAmplitudeSamples` ([realization * n_modes + mode]).
pub(crate) struct AmplitudeCotangents {
    pub g_i_out: Vec<C64>,
    pub g_i_vac: Vec<C64>,
    pub g_s_out: Vec<C64>,
    pub g_s_vac: Vec<C64>,
}

/// Transposes the moment estimators: each mean over realizations spreads
/// its cotangent across the per-realization amplitudes it averaged.
pub(crate) fn amplitude_cotangents(
    samples: &ModeAmplitudeSamples,
    head: &HeadResult,
) -> AmplitudeCotangents {
    let n = samples.n_realizations;
    let nm = samples.n_modes();
    let inv_n = 1.0 / n as f64;
    let half_inv = 0.5 * inv_n;
    let mut cot = AmplitudeCotangents {
        g_i_out: vec![ZERO; n * nm],
        g_i_vac: vec![ZERO; n * nm],
        g_s_out: vec![ZERO; n * nm],
        g_s_vac: vec![ZERO; n * nm],
    };
    for a in 0..nm {
        for b in 0..nm {
            let idx = a * nm + b;
            let gni = head.g_ni[idx];
            let gns = head.g_ns[idx];
            let gpr = head.g_pair[idx];
            let gcr = head.g_cross[idx];
            if gni == ZERO && gns == ZERO && gpr == ZERO && gcr == ZERO {
                continue;
            }
            for r in 0..n {
                let row = r * nm;
                let io_a = samples.a_i_out[row + a];
                let io_b = samples.a_i_out[row + b];
                let so_a = samples.a_s_out[row + a];
                let so_b = samples.a_s_out[row + b];
                let iv_a = samples.a_i_vac[row + a];
                let sv_b = samples.a_s_vac[row + b];
                if gni != ZERO {
                    cot.g_i_out[row + a] += gni.conj() * io_b * inv_n;
                    cot.g_i_out[row + b] += gni * io_a * inv_n;
                }
                if gns != ZERO {
                    cot.g_s_out[row + a] += gns.conj() * so_b * inv_n;
                    cot.g_s_out[row + b] += gns * so_a * inv_n;
                }
                if gpr != ZERO {
                    cot.g_i_out[row + a] += gpr * sv_b.conj() * half_inv;
                    cot.g_s_vac[row + b] += gpr * io_a.conj() * half_inv;
                    cot.g_s_out[row + b] += gpr * iv_a.conj() * half_inv;
                    cot.g_i_vac[row + a] += gpr * so_b.conj() * half_inv;
                }
                if gcr != ZERO {
                    cot.g_i_out[row + a] += gcr.conj() * so_b * inv_n;
                    cot.g_s_out[row + b] += gcr * io_a * inv_n;
                }
            }
        }
    }
    cot
}

/// Re-propagates each realization with a tape and sweeps the adjoint back
/// through it, turning amplitude cotangents into per-plane coupling
/// cotangents (one pair per stage plane, matching the profile layout).
/// Chunk partials fold in chunk order, realizations in index order within
/// a chunk.
pub(crate) fn kappa_cotangents(
    profile: &CouplingProfile,
    grid: &SimGrid,
    waves: &WaveParams,
    noise: &NoiseSpec,
    modes_i: &[Field2D],
    modes_s: &[Field2D],
    cot: &AmplitudeCotangents,
    workers: usize,
) -> Result<Vec<CouplingPair>> {
    let nm = modes_i.len();
    let da = grid.cell_area();
    let cells = grid.nx * grid.ny;
    let n_planes = grid.nz + 1;
    let proto = StepContext::new(grid, waves);
    let chunk_results: Vec<Result<Vec<CouplingPair>>> = run_chunked(
        noise.n_realizations,
        workers,
        || proto.clone(),
        |ctx, range| {
            let mut g: Vec<CouplingPair> =
                (0..n_planes).map(|_| CouplingPair::zeros(grid)).collect();
            let mut tape: Vec<FieldQuartet> = Vec::with_capacity(grid.nz);
            for r in range {
                let mut q = init_vacuum_one(noise, r as u64, grid);
                tape.clear();
                ctx.propagate_impl(&mut q, profile, Some(&mut tape))?;
                // output-facet cotangent fields: the projection transpose
                // is synthesis with the amplitude cotangents as weights
                let mut cq = FieldQuartet::zeros(grid);
                let base = r * nm;
                for m in 0..nm {
                    let w_io = cot.g_i_out[base + m] * da;
                    let w_iv = cot.g_i_vac[base + m] * da;
                    let w_so = cot.g_s_out[base + m] * da;
                    let w_sv = cot.g_s_vac[base + m] * da;
                    let mi = &modes_i[m].data;
                    let ms = &modes_s[m].data;
                    for c in 0..cells {
                        cq.e_i_out.data[c] += w_io * mi[c];
                        cq.e_i_vac.data[c] += w_iv * mi[c];
                        cq.e_s_out.data[c] += w_so * ms[c];
                        cq.e_s_vac.data[c] += w_sv * ms[c];
                    }
                }
                ctx.propagate_adjoint(&mut cq, &tape, profile, &mut g);
            }
            Ok(g)
        },
    );
    let mut g: Vec<CouplingPair> = (0..n_planes).map(|_| CouplingPair::zeros(grid)).collect();
    for chunk in chunk_results {
        let part = chunk?;
        for (acc, p) in g.iter_mut().zip(&part) {
            for (a, v) in acc.kappa_i.data.iter_mut().zip(&p.kappa_i.data) {
                *a += v;
            }
            for (a, v) in acc.kappa_s.data.iter_mut().zip(&p.kappa_s.data) {
                *a += v;
            }
        }
    }
    Ok(g)
}

/// Chains per-plane coupling cotangents back to the flattened parameter
/// gradient: kappa_j(z) = scale_j * chi * pump(z), the envelopes are linear
/// in the coefficients, and waists enter through the basis functions' own
/// waist derivatives. Pump modes are re-synthesized at every plane (they
/// diffract); the chi chain accumulates pointwise across planes because the
/// hologram is z-invariant. The output layout matches
/// `ParamVector::flatten`; masking is the caller's concern.
pub(crate) fn parameter_gradient(
    theta: &ParamVector,
    grid: &SimGrid,
    waves: &WaveParams,
    amplitude: f64,
    g: &[CouplingPair],
) -> Result<Vec<f64>> {
    if g.len() != grid.nz + 1 {
        return Err(SpdcError::shape(
            "coupling cotangents",
            format!("{} planes", grid.nz + 1),
            format!("{} planes", g.len()),
        ));
    }
    let crystal = synth_crystal(theta, grid, waves)?;
    let c2 = SPEED_OF_LIGHT * SPEED_OF_LIGHT;
    let two_over_pi = 2.0 / std::f64::consts::PI;
    let scale_i = waves.omega_i * waves.omega_i / (c2 * waves.k_i) * two_over_pi * waves.d24;
    let scale_s = waves.omega_s * waves.omega_s / (c2 * waves.k_s) * two_over_pi * waves.d24;
    let cells = grid.nx * grid.ny;
    let np = theta.pump_basis.len();
    let nc = theta.crystal_basis.len();

    let mut g_coeff_p = vec![ZERO; np];
    let mut s_w_p = vec![ZERO; np];
    let mut g_env_chi = vec![ZERO; cells];
    let mut drive = vec![ZERO; cells];
    let mut g_env_p = vec![ZERO; cells];
    let mut pump_plane = vec![ZERO; cells];
    for (j, gp) in g.iter().enumerate() {
        let z = j as f64 * grid.dz;
        for c in 0..cells {
            drive[c] = scale_i * gp.kappa_i.data[c] + scale_s * gp.kappa_s.data[c];
            g_env_p[c] = crystal.transverse_envelope.data[c].conj() * drive[c];
        }
        for v in pump_plane.iter_mut() {
            *v = ZERO;
        }
        for (m, spec0) in theta.pump_basis.specs.iter().enumerate() {
            let spec = ModeSpec {
                waist: theta.pump_waists[m],
                ..*spec0
            };
            let (phi, dphi) = synth_mode_with_waist_derivative(&spec, grid, waves.k_p, z)?;
            let cm = theta.pump_coeffs[m];
            let mut gc = ZERO;
            let mut sw = ZERO;
            for c in 0..cells {
                gc += phi.data[c].conj() * g_env_p[c];
                sw += g_env_p[c].conj() * dphi.data[c];
                pump_plane[c] += cm * phi.data[c];
            }
            g_coeff_p[m] += gc;
            s_w_p[m] += sw;
        }
        // pump envelope carries the amplitude factor, exactly as synthesis
        // scales it
        for c in 0..cells {
            g_env_chi[c] += (amplitude * pump_plane[c]).conj() * drive[c];
        }
    }

    let mut flat = vec![0.0; theta.n_scalars()];
    for m in 0..np {
        let gc = amplitude * g_coeff_p[m];
        flat[2 * m] = 2.0 * gc.re;
        flat[2 * m + 1] = 2.0 * gc.im;
        flat[2 * np + m] = 2.0 * amplitude * (theta.pump_coeffs[m] * s_w_p[m]).re;
    }
    for (n, spec0) in theta.crystal_basis.specs.iter().enumerate() {
        let spec = ModeSpec {
            waist: theta.crystal_waists[n],
            ..*spec0
        };
        let (phi, dphi) =
            synth_mode_with_waist_derivative(&spec, grid, waves.k_p, spec.waist_plane_z)?;
        let mut gc = ZERO;
        let mut sw = ZERO;
        for c in 0..cells {
            gc += phi.data[c].conj() * g_env_chi[c];
            sw += g_env_chi[c].conj() * dphi.data[c];
        }
        flat[3 * np + 2 * n] = 2.0 * gc.re;
        flat[3 * np + 2 * n + 1] = 2.0 * gc.im;
        flat[3 * np + 2 * nc + n] = 2.0 * (theta.crystal_coeffs[n] * sw).re;
    }
    Ok(flat)
}
