//! Analytic Laguerre-Gauss and Hermite-Gauss transverse modes.
//!
//! Modes carry their own waist plane; evaluation at any other plane applies
//! the closed-form diffraction of the mode: waist growth w(z), wavefront
//! curvature and Gouy phase. With the Rayleigh range z_R = k w0^2 / 2 and
//! tau = (z - waist_plane) / z_R:
//!
//!   w = w0 sqrt(1 + tau^2),  1/R = z_rel / (z_rel^2 + z_R^2),  psi = atan(tau)
//!
//! and the synthesized value includes exp(-i k r^2 / (2R)), exp(+i l phi)
//! (LG) and exp(+i (order+1) psi). These signs pair with the spectral phase
//! exp(+i (kx^2+ky^2)/(2k) dz) of `grid::transverse_propagator_phase`; the
//! propagation test at the bottom of this file keeps the pair honest.
//!
//! Normalization is the continuum analytic constant (unit L2 norm over the
//! plane), so projections converge with grid refinement instead of being
//! pinned to one discretization.

use crate::dual::{Dual, Scalar};
use crate::error::SpdcError;
use crate::grid::{Field2D, SimGrid};
use crate::Result;
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

/// Minimum grid points per beam waist accepted by synthesis.
pub const MIN_POINTS_PER_WAIST: f64 = 6.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Basis {
    LG,
    HG,
}

/// One analytic mode. For LG, `index1` is the azimuthal number l (may be
/// negative) and `index2` the radial number p >= 0. For HG, `index1`/`index2`
/// are the x/y orders n, m >= 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModeSpec {
    pub basis: Basis,
    pub index1: i32,
    pub index2: i32,
    /// Waist radius in meters.
    pub waist: f64,
    /// Longitudinal position of the waist plane, meters, in the same frame
    /// as the evaluation plane passed to synthesis (crystal input = 0).
    pub waist_plane_z: f64,
}

impl ModeSpec {
    pub fn lg(l: i32, p: i32, waist: f64, waist_plane_z: f64) -> Self {
        ModeSpec {
            basis: Basis::LG,
            index1: l,
            index2: p,
            waist,
            waist_plane_z,
        }
    }

    pub fn hg(n: i32, m: i32, waist: f64, waist_plane_z: f64) -> Self {
        ModeSpec {
            basis: Basis::HG,
            index1: n,
            index2: m,
            waist,
            waist_plane_z,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.basis {
            Basis::LG => {
                if self.index2 < 0 {
                    return Err(SpdcError::config(
                        "mode.index2",
                        format!("LG radial index p must be >= 0, got {}", self.index2),
                    ));
                }
            }
            Basis::HG => {
                if self.index1 < 0 || self.index2 < 0 {
                    return Err(SpdcError::config(
                        "mode.index1/index2",
                        format!(
                            "HG orders must be >= 0, got n={} m={}",
                            self.index1, self.index2
                        ),
                    ));
                }
            }
        }
        if !(self.waist > 0.0) || !self.waist.is_finite() {
            return Err(SpdcError::config(
                "mode.waist",
                format!("waist must be positive and finite, got {}", self.waist),
            ));
        }
        Ok(())
    }

    /// Human-readable label used in CSV/JSON headers, e.g. "LG l=1 p=0".
    pub fn label(&self) -> String {
        match self.basis {
            Basis::LG => format!("LG l={} p={}", self.index1, self.index2),
            Basis::HG => format!("HG n={} m={}", self.index1, self.index2),
        }
    }

    /// Combined transverse order: 2p + |l| for LG, n + m for HG.
    pub fn order(&self) -> i32 {
        match self.basis {
            Basis::LG => 2 * self.index2 + self.index1.abs(),
            Basis::HG => self.index1 + self.index2,
        }
    }
}

/// Post-selection rule applied when a 2D mode ladder is collapsed to the
/// one-index family the coincidence matrices are written in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PostSelect {
    /// Keep LG modes with p = 0 (OAM ladder).
    LgP0,
    /// Keep HG modes with m = 0 (x-order ladder).
    HgM0,
    None,
}

/// Ordered detection or expansion basis sharing one mode family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeSet {
    pub specs: Vec<ModeSpec>,
    pub post_select: PostSelect,
}

impl ModeSet {
    pub fn new(specs: Vec<ModeSpec>, post_select: PostSelect) -> Result<Self> {
        let set = ModeSet { specs, post_select };
        set.validate()?;
        Ok(set)
    }

    pub fn validate(&self) -> Result<()> {
        if self.specs.is_empty() {
            return Err(SpdcError::config("mode_set", "must contain at least one mode"));
        }
        let basis = self.specs[0].basis;
        for (i, spec) in self.specs.iter().enumerate() {
            spec.validate()?;
            if spec.basis != basis {
                return Err(SpdcError::config(
                    "mode_set",
                    format!("mixed bases: member {i} is {:?}, set is {basis:?}", spec.basis),
                ));
            }
        }
        for i in 0..self.specs.len() {
            for j in (i + 1)..self.specs.len() {
                if self.specs[i].index1 == self.specs[j].index1
                    && self.specs[i].index2 == self.specs[j].index2
                {
                    return Err(SpdcError::config(
                        "mode_set",
                        format!("duplicate mode indices at positions {i} and {j}"),
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.specs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.specs.is_empty()
    }

    pub fn labels(&self) -> Vec<String> {
        self.specs.iter().map(ModeSpec::label).collect()
    }
}

fn factorial(n: i32) -> f64 {
    (1..=n as u64).map(|k| k as f64).product()
}

/// Generalized Laguerre polynomial L_p^a(x) by upward recurrence.
fn laguerre<T: Scalar>(p: i32, alpha: i32, x: T) -> T {
    let a = T::from_f64(alpha as f64);
    let mut lm1 = T::from_f64(1.0);
    if p == 0 {
        return lm1;
    }
    let mut l = T::from_f64(1.0) + a - x;
    for k in 2..=p {
        let kf = k as f64;
        let next = ((T::from_f64(2.0 * kf - 1.0) + a - x) * l
            - (T::from_f64(kf - 1.0) + a) * lm1)
            / T::from_f64(kf);
        lm1 = l;
        l = next;
    }
    l
}

/// Physicists' Hermite polynomial H_n(x) by upward recurrence.
fn hermite<T: Scalar>(n: i32, x: T) -> T {
    let mut hm1 = T::from_f64(1.0);
    if n == 0 {
        return hm1;
    }
    let mut h = T::from_f64(2.0) * x;
    for k in 2..=n {
        let next = T::from_f64(2.0) * x * h - T::from_f64(2.0 * (k - 1) as f64) * hm1;
        hm1 = h;
        h = next;
    }
    h
}

/// Beam geometry at an evaluation plane, generic so the waist can be a dual.
struct BeamFrame<T: Scalar> {
    w: T,
    /// Inverse curvature radius 1/R (finite everywhere, 0 at the waist).
    inv_r: T,
    /// Gouy angle psi.
    psi: T,
}

fn beam_frame<T: Scalar>(w0: T, k: f64, z_rel: f64) -> BeamFrame<T> {
    let z = T::from_f64(z_rel);
    let zr = T::from_f64(k / 2.0) * w0 * w0;
    let tau = z / zr;
    let w = w0 * (T::from_f64(1.0) + tau * tau).sqrt();
    let inv_r = z / (z * z + zr * zr);
    let psi = tau.atan();
    BeamFrame { w, inv_r, psi }
}

/// Evaluates one mode at a single point. Returns (re, im) in the chosen
/// scalar; `w0` is the waist as a scalar so d/dw0 rides along when T = Dual.
fn mode_value<T: Scalar>(
    basis: Basis,
    index1: i32,
    index2: i32,
    w0: T,
    k: f64,
    z_rel: f64,
    x: f64,
    y: f64,
) -> (T, T) {
    let frame = beam_frame(w0, k, z_rel);
    let w = frame.w;
    let r2 = T::from_f64(x * x + y * y);
    let gauss = (-(r2 / (w * w))).exp();
    // common longitudinal phase: curvature plus Gouy
    let curvature = -(T::from_f64(k / 2.0)) * r2 * frame.inv_r;
    match basis {
        Basis::LG => {
            let l = index1;
            let p = index2;
            let la = l.abs();
            let norm =
                (2.0 * factorial(p) / (std::f64::consts::PI * factorial(p + la))).sqrt();
            let rho = T::from_f64(2.0) * r2 / (w * w);
            // the sqrt stays in f64: it is constant in w0, and a dual sqrt of
            // an exact zero at the grid origin would poison d with 0/0
            let radial = T::from_f64((2.0 * (x * x + y * y)).sqrt().powi(la)) / w.powi(la as u32);
            let amp = T::from_f64(norm) / w * radial * laguerre(p, la, rho) * gauss;
            let phi = y.atan2(x);
            let gouy = T::from_f64((2 * p + la + 1) as f64) * frame.psi;
            let phase = curvature + T::from_f64(l as f64 * phi) + gouy;
            (amp * phase.cos(), amp * phase.sin())
        }
        Basis::HG => {
            let n = index1;
            let m = index2;
            let norm = (2.0 / std::f64::consts::PI).sqrt()
                / (2f64.powi(n) * factorial(n) * 2f64.powi(m) * factorial(m)).sqrt();
            let sq2 = std::f64::consts::SQRT_2;
            let hx = hermite(n, T::from_f64(sq2 * x) / w);
            let hy = hermite(m, T::from_f64(sq2 * y) / w);
            let amp = T::from_f64(norm) / w * hx * hy * gauss;
            let gouy = T::from_f64((n + m + 1) as f64) * frame.psi;
            let phase = curvature + gouy;
            (amp * phase.cos(), amp * phase.sin())
        }
    }
}

fn check_resolution(spec: &ModeSpec, grid: &SimGrid) -> Result<()> {
    let cell = grid.dx.max(grid.dy);
    let points = spec.waist / cell;
    // tiny slack so waist = exactly MIN * dx passes despite rounding
    if points + 1e-9 < MIN_POINTS_PER_WAIST {
        return Err(SpdcError::Resolution {
            mode: spec.label(),
            waist_m: spec.waist,
            points_per_waist: points,
            required: MIN_POINTS_PER_WAIST,
        });
    }
    Ok(())
}

/// Synthesizes the mode on the grid at evaluation plane `z` (same frame as
/// `waist_plane_z`) for a wave of in-medium wavenumber `k`.
pub fn synth_mode(spec: &ModeSpec, grid: &SimGrid, k: f64, z: f64) -> Result<Field2D> {
    spec.validate()?;
    check_resolution(spec, grid)?;
    let z_rel = z - spec.waist_plane_z;
    Ok(Field2D::from_fn(grid, |x, y| {
        let (re, im) = mode_value::<f64>(spec.basis, spec.index1, spec.index2, spec.waist, k, z_rel, x, y);
        C64::new(re, im)
    }))
}

/// Synthesizes the mode together with its waist derivative d(mode)/d(waist),
/// both as complex fields. Used by the inverse path for waist gradients.
pub(crate) fn synth_mode_with_waist_derivative(
    spec: &ModeSpec,
    grid: &SimGrid,
    k: f64,
    z: f64,
) -> Result<(Field2D, Field2D)> {
    spec.validate()?;
    check_resolution(spec, grid)?;
    let z_rel = z - spec.waist_plane_z;
    let mut value = Field2D::zeros(grid);
    let mut deriv = Field2D::zeros(grid);
    let w0 = Dual::variable(spec.waist);
    let mut idx = 0;
    for iy in 0..grid.ny {
        let y = grid.y(iy);
        for ix in 0..grid.nx {
            let (re, im) =
                mode_value::<Dual>(spec.basis, spec.index1, spec.index2, w0, k, z_rel, grid.x(ix), y);
            value.data[idx] = C64::new(re.v, im.v);
            deriv.data[idx] = C64::new(re.d, im.d);
            idx += 1;
        }
    }
    Ok((value, deriv))
}

/// Discrete projection <mode, field> = sum conj(mode) * field * dx * dy.
pub fn project(field: &Field2D, spec: &ModeSpec, grid: &SimGrid, k: f64, z: f64) -> Result<C64> {
    if (field.nx, field.ny) != (grid.nx, grid.ny) {
        return Err(SpdcError::shape(
            "project",
            format!("{}x{}", grid.nx, grid.ny),
            format!("{}x{}", field.nx, field.ny),
        ));
    }
    let mode = synth_mode(spec, grid, k, z)?;
    Ok(mode.inner(field))
}

/// Coefficient-weighted sum of synthesized modes; no renormalization.
pub fn superpose(
    terms: &[(C64, ModeSpec)],
    grid: &SimGrid,
    k: f64,
    z: f64,
) -> Result<Field2D> {
    if terms.is_empty() {
        return Err(SpdcError::config("superpose", "term list must be non-empty"));
    }
    let mut out = Field2D::zeros(grid);
    for (coeff, spec) in terms {
        let mode = synth_mode(spec, grid, k, z)?;
        for (o, m) in out.data.iter_mut().zip(&mode.data) {
            *o += coeff * m;
        }
    }
    Ok(out)
}

/// Synthesizes every member of a set at one plane, in set order.
pub fn synth_basis(set: &ModeSet, grid: &SimGrid, k: f64, z: f64) -> Result<Vec<Field2D>> {
    set.validate()?;
    set.specs
        .iter()
        .map(|spec| synth_mode(spec, grid, k, z))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fft::Fft2;
    use crate::grid::{build_grid, transverse_propagator_phase};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    const K: f64 = 1.303e7; // ~810 nm at n = 1.68

    fn grid64() -> SimGrid {
        build_grid(64, 64, 4e-6, 4e-6, 10e-6, 1e-3).unwrap()
    }

    #[test]
    fn lg00_is_a_gaussian_at_the_waist() {
        let g = grid64();
        let w = 30e-6;
        let mode = synth_mode(&ModeSpec::lg(0, 0, w, 0.0), &g, K, 0.0).unwrap();
        let norm = (2.0 / std::f64::consts::PI).sqrt() / w;
        for iy in 0..g.ny {
            for ix in 0..g.nx {
                let expect = norm * (-(g.x(ix).powi(2) + g.y(iy).powi(2)) / (w * w)).exp();
                let got = mode.data[iy * g.nx + ix];
                assert!((got - C64::new(expect, 0.0)).norm() < 1e-12 * norm);
            }
        }
    }

    #[test]
    fn hg00_equals_lg00_pointwise() {
        let g = grid64();
        let lg = synth_mode(&ModeSpec::lg(0, 0, 25e-6, 0.0), &g, K, 0.0).unwrap();
        let hg = synth_mode(&ModeSpec::hg(0, 0, 25e-6, 0.0), &g, K, 0.0).unwrap();
        let worst = lg
            .data
            .iter()
            .zip(&hg.data)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max);
        assert!(worst < 1e-12 * lg.max_abs());
    }

    #[test]
    fn lg10_has_central_null_and_full_phase_winding() {
        let g = grid64();
        let mode = synth_mode(&ModeSpec::lg(1, 0, 30e-6, 0.0), &g, K, 0.0).unwrap();
        // r = 0 falls on cell (nx/2, ny/2)
        let center = mode.data[(g.ny / 2) * g.nx + g.nx / 2];
        assert!(center.norm() < 1e-12 * mode.max_abs());
        // walk a ring of radius ~w and accumulate the unwrapped phase
        let radius = 30e-6;
        let samples = 64;
        let mut total = 0.0;
        let mut prev = None;
        for s in 0..=samples {
            let ang = 2.0 * std::f64::consts::PI * s as f64 / samples as f64;
            let x = radius * ang.cos();
            let y = radius * ang.sin();
            // evaluate analytically at off-grid ring points
            let (vr, vi) = super::mode_value::<f64>(Basis::LG, 1, 0, 30e-6, K, 0.0, x, y);
            let v = C64::new(vr, vi);
            let ph = v.arg();
            if let Some(p) = prev {
                let mut d: f64 = ph - p;
                while d > std::f64::consts::PI {
                    d -= 2.0 * std::f64::consts::PI;
                }
                while d < -std::f64::consts::PI {
                    d += 2.0 * std::f64::consts::PI;
                }
                total += d;
            }
            prev = Some(ph);
        }
        assert_relative_eq!(total, 2.0 * std::f64::consts::PI, max_relative = 1e-9);
    }

    #[test]
    fn discrete_norm_is_close_to_one() {
        let g = grid64();
        for spec in [
            ModeSpec::lg(0, 0, 30e-6, 0.0),
            ModeSpec::lg(2, 1, 30e-6, 0.0),
            ModeSpec::hg(1, 0, 30e-6, 0.0),
            ModeSpec::hg(2, 2, 25e-6, 0.0),
        ] {
            let mode = synth_mode(&spec, &g, K, 0.0).unwrap();
            let p = mode.power();
            assert!(
                (p - 1.0).abs() < 1e-3,
                "{} discrete norm {p}",
                spec.label()
            );
        }
    }

    #[test]
    fn projection_recovers_coefficients() {
        let g = grid64();
        let m1 = ModeSpec::lg(1, 0, 28e-6, 0.0);
        let m2 = ModeSpec::lg(-1, 1, 28e-6, 0.0);
        let alpha = C64::new(0.8, -0.3);
        let beta = C64::new(-0.2, 0.55);
        let field = superpose(&[(alpha, m1), (beta, m2)], &g, K, 0.0).unwrap();
        let a = project(&field, &m1, &g, K, 0.0).unwrap();
        let b = project(&field, &m2, &g, K, 0.0).unwrap();
        assert!((a - alpha).norm() < 1e-3);
        assert!((b - beta).norm() < 1e-3);
        // orthogonality of opposite OAM
        let lgp = synth_mode(&ModeSpec::lg(1, 0, 30e-6, 0.0), &g, K, 0.0).unwrap();
        let cross = project(&lgp, &ModeSpec::lg(-1, 0, 30e-6, 0.0), &g, K, 0.0).unwrap();
        assert!(cross.norm() < 1e-6);
    }

    #[test]
    fn projection_rejects_mismatched_grid() {
        let g = grid64();
        let other = build_grid(32, 32, 4e-6, 4e-6, 10e-6, 1e-3).unwrap();
        let field = synth_mode(&ModeSpec::lg(0, 0, 30e-6, 0.0), &other, K, 0.0).unwrap();
        let err = project(&field, &ModeSpec::lg(0, 0, 30e-6, 0.0), &g, K, 0.0);
        assert!(matches!(err, Err(SpdcError::Shape { .. })));
    }

    #[test]
    fn under_resolved_mode_is_refused() {
        let g = grid64(); // dx = 4 um, so 6 points need 24 um
        let err = synth_mode(&ModeSpec::lg(0, 0, 20e-6, 0.0), &g, K, 0.0);
        match err {
            Err(SpdcError::Resolution { required, .. }) => {
                assert_eq!(required, MIN_POINTS_PER_WAIST)
            }
            other => panic!("expected resolution error, got {other:?}"),
        }
        // exactly at the threshold passes
        assert!(synth_mode(&ModeSpec::lg(0, 0, 24e-6, 0.0), &g, K, 0.0).is_ok());
    }

    #[test]
    fn opposite_oam_superposition_gives_two_lobes() {
        // LG(l=+1) + LG(l=-1) interferes to a two-lobe HG10-like profile:
        // intensity ~ x^2, vanishing along the y axis
        let g = grid64();
        let w = 30e-6;
        let field = superpose(
            &[
                (C64::new(1.0, 0.0), ModeSpec::lg(1, 0, w, 0.0)),
                (C64::new(1.0, 0.0), ModeSpec::lg(-1, 0, w, 0.0)),
            ],
            &g,
            K,
            0.0,
        )
        .unwrap();
        let hg10 = synth_mode(&ModeSpec::hg(1, 0, w, 0.0), &g, K, 0.0).unwrap();
        // field should be sqrt(2) * HG10 exactly
        let worst = field
            .data
            .iter()
            .zip(&hg10.data)
            .map(|(f, h)| (f - h * std::f64::consts::SQRT_2).norm())
            .fold(0.0, f64::max);
        assert!(worst < 1e-12 * hg10.max_abs());
    }

    #[test]
    fn same_mode_opposite_phase_cancels() {
        let g = grid64();
        let m = ModeSpec::lg(0, 1, 30e-6, 0.0);
        let field = superpose(
            &[(C64::new(1.0, 0.0), m), (C64::new(-1.0, 0.0), m)],
            &g,
            K,
            0.0,
        );
        // duplicate specs are fine for superpose (it is not a ModeSet)
        let field = field.unwrap();
        assert!(field.max_abs() < 1e-15);
    }

    #[test]
    fn mode_set_rejects_duplicates_and_mixed_bases() {
        let dup = ModeSet::new(
            vec![
                ModeSpec::lg(1, 0, 30e-6, 0.0),
                ModeSpec::lg(1, 0, 25e-6, 0.0),
            ],
            PostSelect::LgP0,
        );
        assert!(dup.is_err());
        let mixed = ModeSet::new(
            vec![
                ModeSpec::lg(1, 0, 30e-6, 0.0),
                ModeSpec::hg(1, 0, 30e-6, 0.0),
            ],
            PostSelect::None,
        );
        assert!(mixed.is_err());
    }

    #[test]
    fn gram_matrix_is_identity() {
        let g = grid64();
        let mut specs = Vec::new();
        for l in -2..=2 {
            for p in 0..=1 {
                specs.push(ModeSpec::lg(l, p, 26e-6, 0.0));
            }
        }
        let set = ModeSet::new(specs, PostSelect::None).unwrap();
        let fields = synth_basis(&set, &g, K, 0.0).unwrap();
        for (i, fi) in fields.iter().enumerate() {
            for (j, fj) in fields.iter().enumerate() {
                let gram = fi.inner(fj);
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!(
                    (gram - C64::new(expect, 0.0)).norm() < 1e-3,
                    "gram[{i}][{j}] = {gram}"
                );
            }
        }
    }

    #[test]
    fn lg_hg_order_one_change_of_basis_round_trips() {
        // LG(+-1, 0) = (HG10 +- i HG01)/sqrt(2); project a random LG
        // superposition onto HG, invert the analytic unitary, and compare
        let g = grid64();
        let w = 30e-6;
        let a_plus = C64::new(0.6, 0.2);
        let a_minus = C64::new(-0.1, 0.7);
        let field = superpose(
            &[
                (a_plus, ModeSpec::lg(1, 0, w, 0.0)),
                (a_minus, ModeSpec::lg(-1, 0, w, 0.0)),
            ],
            &g,
            K,
            0.0,
        )
        .unwrap();
        let c10 = project(&field, &ModeSpec::hg(1, 0, w, 0.0), &g, K, 0.0).unwrap();
        let c01 = project(&field, &ModeSpec::hg(0, 1, w, 0.0), &g, K, 0.0).unwrap();
        // a+ = (c10 - i c01)/sqrt(2), a- = (c10 + i c01)/sqrt(2)
        let i = C64::new(0.0, 1.0);
        let s = 1.0 / std::f64::consts::SQRT_2;
        let back_plus = (c10 - i * c01) * s;
        let back_minus = (c10 + i * c01) * s;
        assert!((back_plus - a_plus).norm() < 1e-10, "got {back_plus}");
        assert!((back_minus - a_minus).norm() < 1e-10, "got {back_minus}");
    }

    #[test]
    fn free_space_propagation_matches_closed_form() {
        // the split-step linear kernel is the exact paraxial propagator, so
        // stepping a mode forward must land on the analytic mode at that
        // plane; this pins the curvature/Gouy signs to the kernel sign
        let g = build_grid(128, 128, 3e-6, 3e-6, 10e-6, 1e-3).unwrap();
        let mut fft = Fft2::new(g.nx, g.ny);
        let w0 = 30e-6;
        let zr = 0.5 * K * w0 * w0;
        let dist = 2.0 * zr;
        let steps = 3;
        let ph = transverse_propagator_phase(&g, K, dist / steps as f64);
        for spec in [ModeSpec::lg(1, 0, w0, 0.0), ModeSpec::hg(2, 1, w0, 0.0)] {
            let mut field = synth_mode(&spec, &g, K, 0.0).unwrap();
            for _ in 0..steps {
                fft.forward(&mut field.data);
                for (v, p) in field.data.iter_mut().zip(&ph) {
                    *v *= p;
                }
                fft.inverse(&mut field.data);
            }
            let expect = synth_mode(&spec, &g, K, dist).unwrap();
            let mut diff2 = 0.0;
            for (a, b) in field.data.iter().zip(&expect.data) {
                diff2 += (a - b).norm_sqr();
            }
            let rel = (diff2 * g.cell_area()).sqrt(); // modes have unit norm
            assert!(
                rel < 0.01,
                "{}: propagated field off by {rel:.3e} in L2",
                spec.label()
            );
        }
    }

    #[test]
    fn waist_derivative_matches_finite_difference() {
        let g = grid64();
        let w = 30e-6;
        let z = 4e-4; // well away from the waist so all terms contribute
        let spec = ModeSpec::lg(1, 1, w, 0.0);
        let (_, deriv) = synth_mode_with_waist_derivative(&spec, &g, K, z).unwrap();
        let h = 1e-9;
        let plus = synth_mode(&ModeSpec { waist: w + h, ..spec }, &g, K, z).unwrap();
        let minus = synth_mode(&ModeSpec { waist: w - h, ..spec }, &g, K, z).unwrap();
        let mut worst = 0.0f64;
        let scale = deriv.max_abs();
        for i in 0..deriv.data.len() {
            let fd = (plus.data[i] - minus.data[i]) / (2.0 * h);
            worst = worst.max((fd - deriv.data[i]).norm());
        }
        assert!(worst < 1e-5 * scale, "worst abs error {worst:.3e} vs scale {scale:.3e}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn truncated_projection_never_gains_power(
            seeds in proptest::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 6),
            wf in 26.0f64..40.0,
        ) {
            // Bessel-type inequality: project onto a truncated near-
            // orthonormal set and resynthesize; power must not grow
            let g = grid64();
            let w = 28e-6;
            let source: Vec<ModeSpec> = vec![
                ModeSpec::lg(0, 0, wf * 1e-6, 0.0),
                ModeSpec::lg(1, 0, wf * 1e-6, 0.0),
                ModeSpec::lg(-1, 1, wf * 1e-6, 0.0),
                ModeSpec::lg(2, 0, wf * 1e-6, 0.0),
                ModeSpec::lg(0, 2, wf * 1e-6, 0.0),
                ModeSpec::lg(-2, 1, wf * 1e-6, 0.0),
            ];
            let terms: Vec<(C64, ModeSpec)> = seeds
                .iter()
                .zip(&source)
                .map(|(&(re, im), spec)| (C64::new(re, im), *spec))
                .collect();
            let field = superpose(&terms, &g, K, 0.0).unwrap();
            prop_assume!(field.power() > 1e-12);
            let truncated = [
                ModeSpec::lg(0, 0, w, 0.0),
                ModeSpec::lg(1, 0, w, 0.0),
                ModeSpec::lg(-1, 0, w, 0.0),
            ];
            let mut resynth = Field2D::zeros(&g);
            for spec in &truncated {
                let amp = project(&field, spec, &g, K, 0.0).unwrap();
                let mode = synth_mode(spec, &g, K, 0.0).unwrap();
                for (o, m) in resynth.data.iter_mut().zip(&mode.data) {
                    *o += amp * m;
                }
            }
            prop_assert!(resynth.power() <= field.power() * 1.01);
        }
    }
}
