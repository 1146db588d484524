//! Emulated quantum state tomography for two-qudit coincidence data.
//!
//! The pipeline mirrors a lab workflow: enumerate projective measurements
//! from generator eigenstates, evaluate coincidence rates for each
//! projector pair from the Gaussian moment data, then invert linearly:
//!
//!   rho_mn = sum_ij a_m^i a_n^j p(lambda_m^i, lambda_n^j)
//!   rho    = sum_mn rho_mn (sigma_m x sigma_n) / (c_m c_n),  c_m = tr(sigma_m^2)
//!
//! The c_m split matters: the identity generator has tr = d while the
//! traceless ones have tr = 2, so a flat 1/d^2 weight only works for d = 2.
//!
//! Everything here is dense linear algebra on matrices no larger than
//! d^2 x d^2 with d <= 3; the eigensolver is a cyclic complex Jacobi.

use crate::error::SpdcError;
use crate::observables::CorrelationData;
use crate::Result;
use num_complex::Complex64 as C64;

const ZERO: C64 = C64::new(0.0, 0.0);
const ONE: C64 = C64::new(1.0, 0.0);

/// Hermitian generators spanning the d-dimensional tomography space,
/// with per-generator eigensystems. Matrices are d x d row-major.
#[derive(Debug, Clone)]
pub struct GeneratorSet {
    pub dim: usize,
    pub matrices: Vec<Vec<C64>>,
    pub eigenvalues: Vec<Vec<f64>>,
    /// eigenvectors[m][i] is the length-d eigenvector paired with
    /// eigenvalues[m][i]
    pub eigenvectors: Vec<Vec<Vec<C64>>>,
}

/// One projective coincidence measurement: a projector state per arm and
/// the measured (or to-be-filled) probability.
#[derive(Debug, Clone)]
pub struct ProjectionRecord {
    pub projector_i: Vec<C64>,
    pub projector_s: Vec<C64>,
    pub probability: f64,
}

/// Reconstructed two-qudit density matrix. `matrix` is the physical
/// (eigenvalue-clipped, renormalized) version used for export and metrics;
/// `raw` keeps the linear reconstruction for smooth loss evaluation.
#[derive(Debug, Clone)]
pub struct DensityMatrix {
    pub dim: usize,
    pub basis_labels: Vec<String>,
    pub matrix: Vec<C64>,
    pub raw: Vec<C64>,
    /// Total negative eigenvalue mass removed by the physicality
    /// projection; nonzero values are surfaced by callers.
    pub clipped_mass: f64,
}

impl DensityMatrix {
    pub fn n(&self) -> usize {
        self.dim * self.dim
    }

    /// Checks Hermiticity, unit trace, and the post-projection eigenvalue
    /// floor on the physical matrix.
    pub fn validate(&self) -> Result<()> {
        let n = self.n();
        let mut trace = 0.0;
        for r in 0..n {
            trace += self.matrix[r * n + r].re;
            for c in 0..n {
                let asym = (self.matrix[r * n + c] - self.matrix[c * n + r].conj()).norm();
                if asym > 1e-9 {
                    return Err(SpdcError::Validation(format!(
                        "density matrix not Hermitian at ({r},{c}): asymmetry {asym:.2e}"
                    )));
                }
            }
        }
        if (trace - 1.0).abs() > 1e-9 {
            return Err(SpdcError::Validation(format!(
                "density matrix trace {trace:.12} != 1"
            )));
        }
        let (eigs, _) = eigen_hermitian(&self.matrix, n);
        let min = eigs.iter().cloned().fold(f64::INFINITY, f64::min);
        if min < -1e-6 {
            return Err(SpdcError::Validation(format!(
                "density matrix minimum eigenvalue {min:.2e} below tolerance"
            )));
        }
        Ok(())
    }
}

/// Generator basis for d in {2, 3}: identity plus Pauli or Gell-Mann
/// matrices, each with its eigensystem attached.
pub fn generators(d: usize) -> Result<GeneratorSet> {
    let matrices: Vec<Vec<C64>> = match d {
        2 => {
            let i = C64::new(0.0, 1.0);
            vec![
                vec![ONE, ZERO, ZERO, ONE],
                vec![ZERO, ONE, ONE, ZERO],
                vec![ZERO, -i, i, ZERO],
                vec![ONE, ZERO, ZERO, -ONE],
            ]
        }
        3 => {
            let i = C64::new(0.0, 1.0);
            let s3 = 1.0 / 3.0_f64.sqrt();
            let from_entries = |entries: &[(usize, usize, C64)]| {
                let mut mat = vec![ZERO; 9];
                for &(r, c, v) in entries {
                    mat[r * 3 + c] = v;
                }
                mat
            };
            vec![
                from_entries(&[(0, 0, ONE), (1, 1, ONE), (2, 2, ONE)]),
                from_entries(&[(0, 1, ONE), (1, 0, ONE)]),
                from_entries(&[(0, 1, -i), (1, 0, i)]),
                from_entries(&[(0, 0, ONE), (1, 1, -ONE)]),
                from_entries(&[(0, 2, ONE), (2, 0, ONE)]),
                from_entries(&[(0, 2, -i), (2, 0, i)]),
                from_entries(&[(1, 2, ONE), (2, 1, ONE)]),
                from_entries(&[(1, 2, -i), (2, 1, i)]),
                from_entries(&[
                    (0, 0, C64::new(s3, 0.0)),
                    (1, 1, C64::new(s3, 0.0)),
                    (2, 2, C64::new(-2.0 * s3, 0.0)),
                ]),
            ]
        }
        other => {
            return Err(SpdcError::Feature {
                reason: format!(
                    "qudit dimension {other} has no generator set; supported: 2, 3"
                ),
            })
        }
    };
    let mut eigenvalues = Vec::with_capacity(matrices.len());
    let mut eigenvectors = Vec::with_capacity(matrices.len());
    for m in &matrices {
        let (vals, vecs) = eigen_hermitian(m, d);
        let vectors: Vec<Vec<C64>> = (0..d)
            .map(|col| (0..d).map(|row| vecs[row * d + col]).collect())
            .collect();
        eigenvalues.push(vals);
        eigenvectors.push(vectors);
    }
    Ok(GeneratorSet {
        dim: d,
        matrices,
        eigenvalues,
        eigenvectors,
    })
}

/// Complete set of d+1 mutually unbiased bases for prime d. Each basis is
/// d orthonormal vectors; vectors from different bases overlap with
/// |<e|f>|^2 = 1/d.
pub fn mub_bases(d: usize) -> Result<Vec<Vec<Vec<C64>>>> {
    match d {
        2 => {
            let r = 1.0 / 2.0_f64.sqrt();
            let h = C64::new(r, 0.0);
            let ih = C64::new(0.0, r);
            Ok(vec![
                vec![vec![ONE, ZERO], vec![ZERO, ONE]],
                vec![vec![h, h], vec![h, -h]],
                vec![vec![h, ih], vec![h, -ih]],
            ])
        }
        3 => {
            // computational basis plus the Weyl family
            // v_j^(k)[m] = omega^(j m + k m^2) / sqrt(3)
            let norm = 1.0 / 3.0_f64.sqrt();
            let omega = |power: i32| {
                let arg = 2.0 * std::f64::consts::PI * (power.rem_euclid(3) as f64) / 3.0;
                C64::new(arg.cos() * norm, arg.sin() * norm)
            };
            let mut bases = Vec::with_capacity(4);
            let comp: Vec<Vec<C64>> = (0..3)
                .map(|j| (0..3).map(|m| if m == j { ONE } else { ZERO }).collect())
                .collect();
            bases.push(comp);
            for k in 0..3i32 {
                let basis: Vec<Vec<C64>> = (0..3i32)
                    .map(|j| (0..3i32).map(|m| omega(j * m + k * m * m)).collect())
                    .collect();
                bases.push(basis);
            }
            Ok(bases)
        }
        other => Err(SpdcError::Feature {
            reason: format!("MUB construction covers prime d = 2, 3; got {other}"),
        }),
    }
}

fn overlap(a: &[C64], b: &[C64]) -> C64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

/// Distinct single-photon projector states across all generator
/// eigenvectors, plus the (generator, eigenindex) -> state lookup.
fn plan_states(gens: &GeneratorSet) -> (Vec<Vec<C64>>, Vec<Vec<usize>>) {
    let mut states: Vec<Vec<C64>> = Vec::new();
    let mut lookup = Vec::with_capacity(gens.matrices.len());
    for vecs in &gens.eigenvectors {
        let mut row = Vec::with_capacity(gens.dim);
        for v in vecs {
            let found = states
                .iter()
                .position(|s| overlap(s, v).norm_sqr() > 1.0 - 1e-9);
            let idx = match found {
                Some(i) => i,
                None => {
                    states.push(v.clone());
                    states.len() - 1
                }
            };
            row.push(idx);
        }
        lookup.push(row);
    }
    (states, lookup)
}

/// Everything the linear reconstruction needs in one bundle: the deduped
/// plan states, the (generator, eigenindex) -> state lookup, and the
/// generator normalization constants tr(sigma_m^2). Plan records are laid
/// out row-major over state pairs in `states` order.
pub(crate) struct ReconstructionMap {
    pub gens: GeneratorSet,
    pub states: Vec<Vec<C64>>,
    pub lookup: Vec<Vec<usize>>,
    pub norms: Vec<f64>,
}

pub(crate) fn reconstruction_map(d: usize) -> Result<ReconstructionMap> {
    let gens = generators(d)?;
    let (states, lookup) = plan_states(&gens);
    let norms = gens
        .matrices
        .iter()
        .map(|mat| (0..d).map(|r| mat_sq_trace_row(mat, d, r)).sum())
        .collect();
    Ok(ReconstructionMap {
        gens,
        states,
        lookup,
        norms,
    })
}

/// Enumerates every projector pair needed by the reconstruction double
/// sum, de-duplicated across generators (d = 2: 36 records over 6 states;
/// d = 3: 225 over 15). Probabilities start at zero.
pub fn measurement_plan(d: usize) -> Result<Vec<ProjectionRecord>> {
    let gens = generators(d)?;
    let (states, _) = plan_states(&gens);
    let mut plan = Vec::with_capacity(states.len() * states.len());
    for a in &states {
        for b in &states {
            plan.push(ProjectionRecord {
                projector_i: a.clone(),
                projector_s: b.clone(),
                probability: 0.0,
            });
        }
    }
    Ok(plan)
}

/// Restriction of one moment matrix to the computational mode subset.
pub(crate) fn submatrix(full: &[C64], n_modes: usize, comp: &[usize]) -> Vec<C64> {
    let d = comp.len();
    let mut out = vec![ZERO; d * d];
    for (a, &ma) in comp.iter().enumerate() {
        for (b, &mb) in comp.iter().enumerate() {
            out[a * d + b] = full[ma * n_modes + mb];
        }
    }
    out
}

/// The four quadratic forms behind one projector-pair rate: occupation
/// numbers for each arm plus the pair and cross amplitudes in the rotated
/// basis. Shared between the rate itself and its reverse-mode transpose.
pub(crate) fn pair_rate_parts(
    u: &[C64],
    v: &[C64],
    ni: &[C64],
    ns: &[C64],
    pair: &[C64],
    cross: &[C64],
) -> (C64, C64, C64, C64) {
    let d = u.len();
    let mut n_u = ZERO;
    let mut n_v = ZERO;
    let mut p_uv = ZERO;
    let mut c_uv = ZERO;
    for k in 0..d {
        for l in 0..d {
            let idx = k * d + l;
            n_u += u[k] * u[l].conj() * ni[idx];
            n_v += v[k] * v[l].conj() * ns[idx];
            p_uv += u[k].conj() * v[l].conj() * pair[idx];
            c_uv += u[k] * v[l].conj() * cross[idx];
        }
    }
    (n_u, n_v, p_uv, c_uv)
}

/// Coincidence rate for one projector pair from the restricted moments.
/// Projecting realizations onto a superposition mode is linear, so the
/// quadratic forms equal the rate the estimator would produce had the
/// superposition been projected directly.
fn pair_rate(u: &[C64], v: &[C64], ni: &[C64], ns: &[C64], pair: &[C64], cross: &[C64]) -> f64 {
    let (n_u, n_v, p_uv, c_uv) = pair_rate_parts(u, v, ni, ns, pair, cross);
    n_u.re * n_v.re + p_uv.norm_sqr() + c_uv.norm_sqr()
}

/// Fills each plan record with its normalized coincidence probability.
/// `comp_modes` maps qudit basis index -> detection mode index; the
/// normalization constant is the total rate over computational pairs.
pub fn simulate_projections(
    plan: &[ProjectionRecord],
    corr: &CorrelationData,
    comp_modes: &[usize],
) -> Result<Vec<ProjectionRecord>> {
    let d = comp_modes.len();
    if plan.is_empty() {
        return Err(SpdcError::config("simulate_projections", "empty plan"));
    }
    if plan[0].projector_i.len() != d {
        return Err(SpdcError::shape(
            "simulate_projections",
            format!("projectors of dimension {}", plan[0].projector_i.len()),
            format!("{d} computational modes"),
        ));
    }
    let nm = corr.n_modes();
    for &m in comp_modes {
        if m >= nm {
            return Err(SpdcError::config(
                "simulate_projections.comp_modes",
                format!("mode index {m} outside detection set of {nm}"),
            ));
        }
    }
    let ni = submatrix(&corr.n_i, nm, comp_modes);
    let ns = submatrix(&corr.n_s, nm, comp_modes);
    let pair = submatrix(&corr.pair_amp, nm, comp_modes);
    let cross = submatrix(&corr.cross, nm, comp_modes);
    let mut z = 0.0;
    for k in 0..d {
        for l in 0..d {
            let mut e_k = vec![ZERO; d];
            let mut e_l = vec![ZERO; d];
            e_k[k] = ONE;
            e_l[l] = ONE;
            z += pair_rate(&e_k, &e_l, &ni, &ns, &pair, &cross);
        }
    }
    if !(z > 0.0) || !z.is_finite() {
        return Err(SpdcError::Normalization {
            context: "simulate_projections".into(),
            reason: format!("computational-basis rate {z:.3e} cannot normalize the plan"),
        });
    }
    Ok(plan
        .iter()
        .map(|rec| ProjectionRecord {
            projector_i: rec.projector_i.clone(),
            projector_s: rec.projector_s.clone(),
            probability: pair_rate(&rec.projector_i, &rec.projector_s, &ni, &ns, &pair, &cross)
                / z,
        })
        .collect())
}

/// Analytic projection probabilities p = <u v| rho |u v> for every plan
/// record; the noise-free counterpart of `simulate_projections` used for
/// round-trip checks and target synthesis.
pub fn analytic_projection_records(rho: &[C64], d: usize) -> Result<Vec<ProjectionRecord>> {
    let n = d * d;
    if rho.len() != n * n {
        return Err(SpdcError::shape(
            "analytic_projection_records",
            format!("{}x{} density matrix", n, n),
            format!("{} entries", rho.len()),
        ));
    }
    let plan = measurement_plan(d)?;
    Ok(plan
        .into_iter()
        .map(|mut rec| {
            // |u v> has components u_k v_l at row k*d + l
            let mut p = 0.0;
            for k in 0..d {
                for l in 0..d {
                    for k2 in 0..d {
                        for l2 in 0..d {
                            let bra = (rec.projector_i[k] * rec.projector_s[l]).conj();
                            let ket = rec.projector_i[k2] * rec.projector_s[l2];
                            p += (bra * rho[(k * d + l) * n + (k2 * d + l2)] * ket).re;
                        }
                    }
                }
            }
            rec.probability = p.max(0.0);
            rec
        })
        .collect())
}

/// Linear reconstruction followed by the physicality projection. Records
/// must cover every de-duplicated projector pair of the plan; gaps raise
/// a coverage error naming the first missing pair.
pub fn reconstruct_rho(records: &[ProjectionRecord], d: usize) -> Result<DensityMatrix> {
    let map = reconstruction_map(d)?;
    let (gens, states, lookup) = (&map.gens, &map.states, &map.lookup);
    let s = states.len();
    // match supplied records to plan states by overlap, phase-insensitive
    let mut prob = vec![f64::NAN; s * s];
    for rec in records {
        let find = |v: &[C64]| {
            states
                .iter()
                .position(|st| overlap(st, v).norm_sqr() > 1.0 - 1e-9)
        };
        if let (Some(a), Some(b)) = (find(&rec.projector_i), find(&rec.projector_s)) {
            prob[a * s + b] = rec.probability;
        }
    }
    let missing: Vec<usize> = (0..s * s).filter(|&i| prob[i].is_nan()).collect();
    if !missing.is_empty() {
        let first = missing[0];
        return Err(SpdcError::Coverage {
            missing: missing.len(),
            first: format!("state pair ({}, {})", first / s, first % s),
        });
    }
    let n = d * d;
    let n_gen = gens.matrices.len();
    // rho_mn = sum_ij a_m^i a_n^j p(i, j)
    let mut rho_mn = vec![0.0; n_gen * n_gen];
    for m in 0..n_gen {
        for nn in 0..n_gen {
            let mut acc = 0.0;
            for i in 0..d {
                for j in 0..d {
                    acc += gens.eigenvalues[m][i]
                        * gens.eigenvalues[nn][j]
                        * prob[lookup[m][i] * s + lookup[nn][j]];
                }
            }
            rho_mn[m * n_gen + nn] = acc;
        }
    }
    // rho = sum_mn rho_mn (sigma_m x sigma_n) / (c_m c_n)
    let c = &map.norms;
    let mut raw = vec![ZERO; n * n];
    for m in 0..n_gen {
        for nn in 0..n_gen {
            let w = rho_mn[m * n_gen + nn] / (c[m] * c[nn]);
            if w == 0.0 {
                continue;
            }
            let sm = &gens.matrices[m];
            let sn = &gens.matrices[nn];
            for r1 in 0..d {
                for c1 in 0..d {
                    let a = sm[r1 * d + c1];
                    if a == ZERO {
                        continue;
                    }
                    for r2 in 0..d {
                        for c2 in 0..d {
                            raw[(r1 * d + r2) * n + (c1 * d + c2)] += w * a * sn[r2 * d + c2];
                        }
                    }
                }
            }
        }
    }
    // hermitize before the eigenvalue clip
    for r in 0..n {
        for col in (r + 1)..n {
            let avg = 0.5 * (raw[r * n + col] + raw[col * n + r].conj());
            raw[r * n + col] = avg;
            raw[col * n + r] = avg.conj();
        }
        raw[r * n + r] = C64::new(raw[r * n + r].re, 0.0);
    }
    let (matrix, clipped_mass) = project_physical(&raw, n)?;
    Ok(DensityMatrix {
        dim: d,
        basis_labels: (0..d).map(|k| format!("|{k}>")).collect(),
        matrix,
        raw,
        clipped_mass,
    })
}

fn mat_sq_trace_row(mat: &[C64], d: usize, r: usize) -> f64 {
    (0..d).map(|c| (mat[r * d + c] * mat[c * d + r]).re).sum()
}

/// Eigenvalue clip and trace renormalization onto the physical set.
pub fn project_physical(raw: &[C64], n: usize) -> Result<(Vec<C64>, f64)> {
    let (eigs, vecs) = eigen_hermitian(raw, n);
    let mut clipped = 0.0;
    let kept: Vec<f64> = eigs
        .iter()
        .map(|&e| {
            if e < 0.0 {
                clipped += -e;
                0.0
            } else {
                e
            }
        })
        .collect();
    let total: f64 = kept.iter().sum();
    if !(total > 0.0) || !total.is_finite() {
        return Err(SpdcError::Normalization {
            context: "project_physical".into(),
            reason: format!("eigenvalue mass {total:.3e} after clipping"),
        });
    }
    let mut out = vec![ZERO; n * n];
    for (k, &lam) in kept.iter().enumerate() {
        let w = lam / total;
        if w == 0.0 {
            continue;
        }
        for r in 0..n {
            let vr = vecs[r * n + k];
            for c in 0..n {
                out[r * n + c] += w * vr * vecs[c * n + k].conj();
            }
        }
    }
    Ok((out, clipped))
}

/// Trace distance (1/2) sum |eig(a - b)| between Hermitian matrices of
/// equal side n.
pub fn trace_distance(a: &[C64], b: &[C64], n: usize) -> Result<f64> {
    if a.len() != n * n || b.len() != n * n {
        return Err(SpdcError::shape(
            "trace_distance",
            format!("two {n}x{n} matrices"),
            format!("{} and {} entries", a.len(), b.len()),
        ));
    }
    let diff: Vec<C64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let (eigs, _) = eigen_hermitian(&diff, n);
    Ok(0.5 * eigs.iter().map(|e| e.abs()).sum::<f64>())
}

/// Outer product |psi><psi| of a (not necessarily normalized) pure state.
pub fn pure_state_density(psi: &[C64]) -> Result<Vec<C64>> {
    let norm: f64 = psi.iter().map(|c| c.norm_sqr()).sum();
    if !(norm > 0.0) || !norm.is_finite() {
        return Err(SpdcError::Normalization {
            context: "pure_state_density".into(),
            reason: format!("state norm {norm:.3e}"),
        });
    }
    let n = psi.len();
    let mut rho = vec![ZERO; n * n];
    for r in 0..n {
        for c in 0..n {
            rho[r * n + c] = psi[r] * psi[c].conj() / norm;
        }
    }
    Ok(rho)
}

/// Cyclic complex Jacobi eigensolver for Hermitian matrices. Returns
/// eigenvalues sorted descending and the matching eigenvectors as columns
/// of a row-major n x n matrix. Intended for the small (<= 9 x 9)
/// matrices of this module.
pub(crate) fn eigen_hermitian(a: &[C64], n: usize) -> (Vec<f64>, Vec<C64>) {
    assert_eq!(a.len(), n * n, "eigen_hermitian: shape");
    let mut w = a.to_vec();
    let mut v = vec![ZERO; n * n];
    for i in 0..n {
        v[i * n + i] = ONE;
    }
    let norm2: f64 = w.iter().map(|c| c.norm_sqr()).sum();
    let tol = 1e-30 * norm2.max(f64::MIN_POSITIVE);
    for _sweep in 0..60 {
        let off: f64 = (0..n)
            .flat_map(|p| ((p + 1)..n).map(move |q| (p, q)))
            .map(|(p, q)| w[p * n + q].norm_sqr())
            .sum();
        if off <= tol {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let beta = w[p * n + q];
                let b = beta.norm();
                if b * b <= tol / (n * n) as f64 {
                    continue;
                }
                let phase = beta / b;
                let tau = (w[q * n + q].re - w[p * n + p].re) / (2.0 * b);
                let t = if tau == 0.0 {
                    1.0
                } else {
                    tau.signum() / (tau.abs() + (1.0 + tau * tau).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                let vpq = phase * s;
                // right multiply columns p and q by the rotation
                for r in 0..n {
                    let wp = w[r * n + p];
                    let wq = w[r * n + q];
                    w[r * n + p] = c * wp - vpq.conj() * wq;
                    w[r * n + q] = vpq * wp + c * wq;
                    let vp = v[r * n + p];
                    let vq = v[r * n + q];
                    v[r * n + p] = c * vp - vpq.conj() * vq;
                    v[r * n + q] = vpq * vp + c * vq;
                }
                // left multiply rows p and q by the adjoint rotation
                for col in 0..n {
                    let wp = w[p * n + col];
                    let wq = w[q * n + col];
                    w[p * n + col] = c * wp - vpq * wq;
                    w[q * n + col] = vpq.conj() * wp + c * wq;
                }
                w[p * n + q] = ZERO;
                w[q * n + p] = ZERO;
                w[p * n + p] = C64::new(w[p * n + p].re, 0.0);
                w[q * n + q] = C64::new(w[q * n + q].re, 0.0);
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        w[j * n + j]
            .re
            .partial_cmp(&w[i * n + i].re)
            .expect("eigenvalues are finite")
    });
    let eigs: Vec<f64> = order.iter().map(|&i| w[i * n + i].re).collect();
    let mut vecs = vec![ZERO; n * n];
    for (new_col, &old_col) in order.iter().enumerate() {
        // fix the gauge: largest component real positive
        let mut pivot = 0;
        let mut best = -1.0;
        for r in 0..n {
            let m = v[r * n + old_col].norm_sqr();
            if m > best {
                best = m;
                pivot = r;
            }
        }
        let piv = v[pivot * n + old_col];
        let gauge = if piv.norm() > 0.0 {
            piv.conj() / piv.norm()
        } else {
            ONE
        };
        for r in 0..n {
            vecs[r * n + new_col] = v[r * n + old_col] * gauge;
        }
    }
    (eigs, vecs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::modes::PostSelect;
    use crate::observables::CorrelationData;

    fn kron_state(d: usize, pairs: &[(usize, usize, C64)]) -> Vec<C64> {
        let mut psi = vec![ZERO; d * d];
        for &(k, l, amp) in pairs {
            psi[k * d + l] = amp;
        }
        psi
    }

    #[test]
    fn jacobi_diagonalizes_dense_hermitian() {
        // deterministic pseudo-random Hermitian 9x9
        let n = 9;
        let mut a = vec![ZERO; n * n];
        let mut state = 0x2545F4914F6CDD1Du64;
        let mut next = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1);
            ((state >> 33) as f64) / (u32::MAX as f64) - 0.5
        };
        for r in 0..n {
            for c in r..n {
                let v = if r == c {
                    C64::new(next(), 0.0)
                } else {
                    C64::new(next(), next())
                };
                a[r * n + c] = v;
                a[c * n + r] = v.conj();
            }
        }
        let (eigs, vecs) = eigen_hermitian(&a, n);
        // residual ||A V - V diag||
        let mut resid = 0.0;
        for col in 0..n {
            for r in 0..n {
                let mut av = ZERO;
                for k in 0..n {
                    av += a[r * n + k] * vecs[k * n + col];
                }
                resid += (av - eigs[col] * vecs[r * n + col]).norm_sqr();
            }
        }
        assert!(resid.sqrt() < 1e-10, "residual {:.2e}", resid.sqrt());
        // unitarity
        for c1 in 0..n {
            for c2 in 0..n {
                let mut dot = ZERO;
                for r in 0..n {
                    dot += vecs[r * n + c1].conj() * vecs[r * n + c2];
                }
                let want = if c1 == c2 { 1.0 } else { 0.0 };
                assert!((dot - want * ONE).norm() < 1e-12);
            }
        }
        // eigenvalues sorted descending
        for k in 1..n {
            assert!(eigs[k - 1] >= eigs[k]);
        }
    }

    #[test]
    fn generator_sets_reconstruct_from_eigensystems() {
        for d in [2usize, 3] {
            let gens = generators(d).unwrap();
            assert_eq!(gens.matrices.len(), d * d);
            for (m, mat) in gens.matrices.iter().enumerate() {
                for r in 0..d {
                    for c in 0..d {
                        assert_eq!(mat[r * d + c], mat[c * d + r].conj(), "hermiticity");
                        let mut rebuilt = ZERO;
                        for i in 0..d {
                            rebuilt += gens.eigenvalues[m][i]
                                * gens.eigenvectors[m][i][r]
                                * gens.eigenvectors[m][i][c].conj();
                        }
                        assert!(
                            (rebuilt - mat[r * d + c]).norm() < 1e-10,
                            "generator {m} entry ({r},{c})"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn generator_orthogonality_constants() {
        for d in [2usize, 3] {
            let gens = generators(d).unwrap();
            for (m, sm) in gens.matrices.iter().enumerate() {
                for (nn, sn) in gens.matrices.iter().enumerate() {
                    let mut tr = ZERO;
                    for r in 0..d {
                        for c in 0..d {
                            tr += sm[r * d + c] * sn[c * d + r];
                        }
                    }
                    let want = if m != nn {
                        0.0
                    } else if m == 0 {
                        d as f64
                    } else {
                        2.0
                    };
                    assert!(
                        (tr - want * ONE).norm() < 1e-12,
                        "tr(s{m} s{nn}) = {tr} want {want}"
                    );
                }
            }
        }
    }

    #[test]
    fn unsupported_dimension_is_a_feature_error() {
        assert!(matches!(generators(4), Err(SpdcError::Feature { .. })));
        assert!(matches!(mub_bases(4), Err(SpdcError::Feature { .. })));
    }

    #[test]
    fn mub_overlaps_are_flat() {
        for d in [2usize, 3] {
            let bases = mub_bases(d).unwrap();
            assert_eq!(bases.len(), d + 1);
            for (bi, basis) in bases.iter().enumerate() {
                for (vi, v) in basis.iter().enumerate() {
                    for (wi, w2) in basis.iter().enumerate() {
                        let want = if vi == wi { 1.0 } else { 0.0 };
                        assert!(
                            (overlap(v, w2).norm_sqr() - want).abs() < 1e-12,
                            "basis {bi} not orthonormal"
                        );
                    }
                }
                for other in bases.iter().skip(bi + 1) {
                    for v in basis {
                        for w2 in other {
                            let o = overlap(v, w2).norm_sqr();
                            assert!(
                                (o - 1.0 / d as f64).abs() < 1e-12,
                                "cross overlap {o} for d={d}"
                            );
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn plan_sizes_match_prime_dimension_counts() {
        let plan2 = measurement_plan(2).unwrap();
        assert_eq!(plan2.len(), 36);
        let plan3 = measurement_plan(3).unwrap();
        assert_eq!(plan3.len(), 225);
        for rec in plan2.iter().chain(&plan3) {
            let ni: f64 = rec.projector_i.iter().map(|c| c.norm_sqr()).sum();
            let ns: f64 = rec.projector_s.iter().map(|c| c.norm_sqr()).sum();
            assert!((ni - 1.0).abs() < 1e-9 && (ns - 1.0).abs() < 1e-9);
        }
        // d=2 states are exactly the 3 MUB bases
        let mut distinct2: Vec<Vec<C64>> = Vec::new();
        for rec in &plan2 {
            if !distinct2
                .iter()
                .any(|s| overlap(s, &rec.projector_i).norm_sqr() > 1.0 - 1e-9)
            {
                distinct2.push(rec.projector_i.clone());
            }
        }
        assert_eq!(distinct2.len(), 6);
        let mubs = mub_bases(2).unwrap();
        for basis in &mubs {
            for v in basis {
                assert!(
                    distinct2
                        .iter()
                        .any(|s| overlap(s, v).norm_sqr() > 1.0 - 1e-9),
                    "MUB vector missing from plan"
                );
            }
        }
    }

    #[test]
    fn bell_state_splits_evenly_in_rotated_basis() {
        // psi+ = (|01> + |10>)/sqrt(2) probed along X x X
        let psi = kron_state(
            2,
            &[
                (0, 1, C64::new(1.0, 0.0)),
                (1, 0, C64::new(1.0, 0.0)),
            ],
        );
        let rho = pure_state_density(&psi).unwrap();
        let records = analytic_projection_records(&rho, 2).unwrap();
        let r = 0.5f64.sqrt();
        let plus = vec![C64::new(r, 0.0), C64::new(r, 0.0)];
        let minus = vec![C64::new(r, 0.0), C64::new(-r, 0.0)];
        let find = |u: &[C64], v: &[C64]| {
            records
                .iter()
                .find(|rec| {
                    overlap(&rec.projector_i, u).norm_sqr() > 1.0 - 1e-9
                        && overlap(&rec.projector_s, v).norm_sqr() > 1.0 - 1e-9
                })
                .map(|rec| rec.probability)
                .unwrap()
        };
        assert!((find(&plus, &plus) - 0.5).abs() < 1e-12);
        assert!((find(&minus, &minus) - 0.5).abs() < 1e-12);
        assert!(find(&plus, &minus) < 1e-12);
        assert!(find(&minus, &plus) < 1e-12);
    }

    #[test]
    fn round_trip_recovers_bell_state() {
        let psi = kron_state(
            2,
            &[
                (0, 1, C64::new(1.0, 0.0)),
                (1, 0, C64::new(1.0, 0.0)),
            ],
        );
        let rho = pure_state_density(&psi).unwrap();
        let records = analytic_projection_records(&rho, 2).unwrap();
        let recon = reconstruct_rho(&records, 2).unwrap();
        recon.validate().unwrap();
        let td = trace_distance(&recon.matrix, &rho, 4).unwrap();
        assert!(td < 1e-6, "trace distance {td:.2e}");
        assert!(recon.clipped_mass < 1e-9);
    }

    #[test]
    fn round_trip_recovers_maximally_mixed() {
        for d in [2usize, 3] {
            let n = d * d;
            let mut rho = vec![ZERO; n * n];
            for i in 0..n {
                rho[i * n + i] = C64::new(1.0 / n as f64, 0.0);
            }
            let records = analytic_projection_records(&rho, d).unwrap();
            let recon = reconstruct_rho(&records, d).unwrap();
            for (got, want) in recon.matrix.iter().zip(&rho) {
                assert!((got - want).norm() < 1e-9);
            }
        }
    }

    #[test]
    fn round_trip_recovers_qutrit_target() {
        // (|00> + |11> + |22>)/sqrt(3): nine equal coherences of 1/3
        let a = C64::new(1.0, 0.0);
        let psi = kron_state(3, &[(0, 0, a), (1, 1, a), (2, 2, a)]);
        let rho = pure_state_density(&psi).unwrap();
        let records = analytic_projection_records(&rho, 3).unwrap();
        let recon = reconstruct_rho(&records, 3).unwrap();
        recon.validate().unwrap();
        let td = trace_distance(&recon.matrix, &rho, 9).unwrap();
        assert!(td < 1e-6, "trace distance {td:.2e}");
        let (eigs, _) = eigen_hermitian(&recon.matrix, 9);
        assert!((eigs[0] - 1.0).abs() < 1e-6);
        assert!(eigs[1].abs() < 1e-6);
        for k in [0usize, 4, 8] {
            for l in [0usize, 4, 8] {
                assert!((recon.matrix[k * 9 + l] - C64::new(1.0 / 3.0, 0.0)).norm() < 1e-6);
            }
        }
    }

    #[test]
    fn incomplete_records_raise_coverage_error() {
        let psi = kron_state(
            2,
            &[
                (0, 1, C64::new(1.0, 0.0)),
                (1, 0, C64::new(1.0, 0.0)),
            ],
        );
        let rho = pure_state_density(&psi).unwrap();
        let mut records = analytic_projection_records(&rho, 2).unwrap();
        records.truncate(30);
        let err = reconstruct_rho(&records, 2);
        match err {
            Err(SpdcError::Coverage { missing, .. }) => assert_eq!(missing, 6),
            other => panic!("expected coverage error, got {other:?}"),
        }
    }

    #[test]
    fn trace_distance_closed_forms() {
        let a = C64::new(1.0, 0.0);
        let psi = kron_state(3, &[(0, 0, a), (1, 1, a), (2, 2, a)]);
        let rho = pure_state_density(&psi).unwrap();
        assert!(trace_distance(&rho, &rho, 9).unwrap() < 1e-14);
        // orthogonal pure states
        let psi2 = kron_state(3, &[(0, 1, a)]);
        let rho2 = pure_state_density(&psi2).unwrap();
        assert!((trace_distance(&rho, &rho2, 9).unwrap() - 1.0).abs() < 1e-12);
        // depolarized mixture: eps (1 - 1/d^2)
        let eps = 0.3;
        let n = 9;
        let mut mixed = rho.clone();
        for i in 0..n {
            for j in 0..n {
                mixed[i * n + j] *= 1.0 - eps;
            }
            mixed[i * n + i] += C64::new(eps / n as f64, 0.0);
        }
        let want = eps * (1.0 - 1.0 / n as f64);
        let got = trace_distance(&rho, &mixed, 9).unwrap();
        assert!((got - want).abs() < 1e-12, "got {got} want {want}");
    }

    #[test]
    fn simulated_projections_match_pure_pair_source() {
        // synthetic correlation data for psi+ living in a 2-mode subspace
        let d = 2;
        let scale = 3e-4;
        let mut pair = vec![ZERO; 4];
        pair[0 * d + 1] = C64::new(scale, 0.0);
        pair[1 * d + 0] = C64::new(scale, 0.0);
        let corr = CorrelationData {
            specs: vec![
                crate::modes::ModeSpec::lg(-1, 0, 24e-6, 0.0),
                crate::modes::ModeSpec::lg(1, 0, 24e-6, 0.0),
            ],
            post_select: PostSelect::None,
            n_realizations: 1000,
            n_i: vec![ZERO; 4],
            n_s: vec![ZERO; 4],
            pair_amp: pair,
            cross: vec![ZERO; 4],
        };
        let plan = measurement_plan(2).unwrap();
        let records = simulate_projections(&plan, &corr, &[0, 1]).unwrap();
        let recon = reconstruct_rho(&records, 2).unwrap();
        let psi = kron_state(
            2,
            &[
                (0, 1, C64::new(1.0, 0.0)),
                (1, 0, C64::new(1.0, 0.0)),
            ],
        );
        let rho = pure_state_density(&psi).unwrap();
        let td = trace_distance(&recon.matrix, &rho, 4).unwrap();
        assert!(td < 1e-9, "trace distance {td:.2e}");
    }
}
