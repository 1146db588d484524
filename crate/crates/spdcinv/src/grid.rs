//! Transverse simulation grid, wave parameters and spectral phases.
//!
//! The grid is a periodic nx x ny window sampled at dx, dy with the crystal
//! discretized into nz slabs of thickness dz. Spatial frequencies follow the
//! usual FFT bin order (non-negative frequencies first), kx[j] = 2*pi*f_j
//! with f_j = j/(nx*dx) for j < nx/2 and (j-nx)/(nx*dx) above.
//!
//! The linear half of each split step multiplies the spectrum by
//! exp(+i*(kx^2+ky^2)/(2k)*dz); together with the mode conventions in
//! `modes` this reproduces free-space Gaussian beam expansion.

use crate::error::SpdcError;
use crate::Result;
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

/// Vacuum speed of light in m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Transverse grid and longitudinal step layout. `nz * dz` is the crystal
/// length by construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimGrid {
    pub nx: usize,
    pub ny: usize,
    /// Transverse cell sizes in meters.
    pub dx: f64,
    pub dy: f64,
    /// Number of split steps along the crystal.
    pub nz: usize,
    /// Step thickness in meters.
    pub dz: f64,
}

impl SimGrid {
    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Crystal length in meters, exactly nz * dz.
    pub fn crystal_length(&self) -> f64 {
        self.nz as f64 * self.dz
    }

    pub fn cell_area(&self) -> f64 {
        self.dx * self.dy
    }

    /// Centered x coordinate of column ix; x = 0 falls on column nx/2.
    pub fn x(&self, ix: usize) -> f64 {
        (ix as f64 - (self.nx / 2) as f64) * self.dx
    }

    /// Centered y coordinate of row iy.
    pub fn y(&self, iy: usize) -> f64 {
        (iy as f64 - (self.ny / 2) as f64) * self.dy
    }

    /// Spatial frequency (rad/m) of spectral column ix in FFT bin order.
    pub fn kx(&self, ix: usize) -> f64 {
        let n = self.nx as f64;
        let j = if ix < self.nx / 2 {
            ix as f64
        } else {
            ix as f64 - n
        };
        2.0 * std::f64::consts::PI * j / (n * self.dx)
    }

    pub fn ky(&self, iy: usize) -> f64 {
        let n = self.ny as f64;
        let j = if iy < self.ny / 2 {
            iy as f64
        } else {
            iy as f64 - n
        };
        2.0 * std::f64::consts::PI * j / (n * self.dy)
    }
}

/// Validated grid constructor. Transverse sizes must be powers of two (the
/// propagator assumes radix-2 FFT shapes) and the crystal length must be an
/// integer number of steps within 1e-6 relative.
pub fn build_grid(
    nx: usize,
    ny: usize,
    dx: f64,
    dy: f64,
    dz: f64,
    crystal_length: f64,
) -> Result<SimGrid> {
    if !nx.is_power_of_two() || !ny.is_power_of_two() {
        return Err(SpdcError::config(
            "grid.nx/ny",
            format!("transverse sizes must be powers of two, got {nx}x{ny}"),
        ));
    }
    for (name, v) in [("dx", dx), ("dy", dy), ("dz", dz)] {
        if !(v > 0.0) || !v.is_finite() {
            return Err(SpdcError::config(
                format!("grid.{name}"),
                format!("must be positive and finite, got {v}"),
            ));
        }
    }
    if !(crystal_length > 0.0) {
        return Err(SpdcError::config(
            "grid.crystal_length",
            format!("must be positive, got {crystal_length}"),
        ));
    }
    let steps = crystal_length / dz;
    let nz = steps.round() as usize;
    if nz == 0 || (steps - nz as f64).abs() > 1e-6 * steps.max(1.0) {
        return Err(SpdcError::config(
            "grid.dz",
            format!(
                "crystal length {crystal_length:.6e} m is not an integer \
                 multiple of dz {dz:.6e} m"
            ),
        ));
    }
    Ok(SimGrid {
        nx,
        ny,
        dx,
        dy,
        nz,
        dz,
    })
}

/// Dispersion-free wave bookkeeping for the three interacting waves.
/// Wavenumbers are in-medium: k = 2*pi*n/lambda.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaveParams {
    /// Vacuum wavelengths in meters.
    pub lambda_p: f64,
    pub lambda_s: f64,
    pub lambda_i: f64,
    /// Refractive indices at the respective wavelengths.
    pub n_p: f64,
    pub n_s: f64,
    pub n_i: f64,
    /// In-medium wavenumbers, rad/m.
    pub k_p: f64,
    pub k_s: f64,
    pub k_i: f64,
    /// Angular frequencies, rad/s.
    pub omega_p: f64,
    pub omega_s: f64,
    pub omega_i: f64,
    /// Nonlinear coefficient magnitude, m/V.
    pub d24: f64,
    /// Poling period, meters.
    pub poling_period: f64,
    /// Residual mismatch after quasi-phase matching:
    /// delta_k = k_p - k_s - k_i - 2*pi/period.
    pub delta_k: f64,
}

/// Poling specification: an explicit period, or a period chosen so the
/// first-order grating exactly cancels the collinear mismatch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Poling {
    Period(f64),
    AutoQpm,
}

/// Builds [`WaveParams`], enforcing energy conservation
/// 1/lambda_p = 1/lambda_s + 1/lambda_i to 1e-9 relative.
pub fn wave_params(
    lambda_p: f64,
    lambda_s: f64,
    lambda_i: f64,
    n_p: f64,
    n_s: f64,
    n_i: f64,
    d24: f64,
    poling: Poling,
) -> Result<WaveParams> {
    for (name, v) in [
        ("lambda_p", lambda_p),
        ("lambda_s", lambda_s),
        ("lambda_i", lambda_i),
        ("n_p", n_p),
        ("n_s", n_s),
        ("n_i", n_i),
    ] {
        if !(v > 0.0) || !v.is_finite() {
            return Err(SpdcError::config(
                format!("waves.{name}"),
                format!("must be positive and finite, got {v}"),
            ));
        }
    }
    let budget = 1.0 / lambda_p - 1.0 / lambda_s - 1.0 / lambda_i;
    if budget.abs() > 1e-9 / lambda_p {
        return Err(SpdcError::config(
            "waves.lambda_*",
            format!(
                "energy conservation violated: 1/lp - 1/ls - 1/li = {budget:.3e} 1/m"
            ),
        ));
    }
    let two_pi = 2.0 * std::f64::consts::PI;
    let k_p = two_pi * n_p / lambda_p;
    let k_s = two_pi * n_s / lambda_s;
    let k_i = two_pi * n_i / lambda_i;
    let mismatch = k_p - k_s - k_i;
    let poling_period = match poling {
        Poling::Period(p) => {
            if p == 0.0 || !p.is_finite() {
                return Err(SpdcError::config(
                    "waves.poling_period",
                    format!("must be nonzero and finite, got {p}"),
                ));
            }
            p
        }
        Poling::AutoQpm => {
            if mismatch.abs() < 1e-6 {
                return Err(SpdcError::config(
                    "waves.poling",
                    "auto QPM undefined: collinear mismatch is already zero",
                ));
            }
            two_pi / mismatch
        }
    };
    let delta_k = mismatch - two_pi / poling_period;
    Ok(WaveParams {
        lambda_p,
        lambda_s,
        lambda_i,
        n_p,
        n_s,
        n_i,
        k_p,
        k_s,
        k_i,
        omega_p: two_pi * SPEED_OF_LIGHT / lambda_p,
        omega_s: two_pi * SPEED_OF_LIGHT / lambda_s,
        omega_i: two_pi * SPEED_OF_LIGHT / lambda_i,
        d24,
        poling_period,
        delta_k,
    })
}

/// Per-bin spectral phase exp(+i*(kx^2+ky^2)/(2k)*dz) implementing the
/// linear (diffraction) half of the split step for a wave with wavenumber k.
/// dz = 0 returns an all-ones field.
pub fn transverse_propagator_phase(grid: &SimGrid, k: f64, dz: f64) -> Vec<C64> {
    assert!(k > 0.0, "wavenumber must be positive");
    let mut phase = Vec::with_capacity(grid.len());
    for iy in 0..grid.ny {
        let ky2 = grid.ky(iy).powi(2);
        for ix in 0..grid.nx {
            let kx2 = grid.kx(ix).powi(2);
            let arg = (kx2 + ky2) / (2.0 * k) * dz;
            phase.push(C64::new(arg.cos(), arg.sin()));
        }
    }
    phase
}

/// Complex scalar field sampled on the transverse grid, row-major
/// (index = iy * nx + ix).
#[derive(Debug, Clone, PartialEq)]
pub struct Field2D {
    pub nx: usize,
    pub ny: usize,
    pub dx: f64,
    pub dy: f64,
    pub data: Vec<C64>,
}

impl Field2D {
    pub fn zeros(grid: &SimGrid) -> Self {
        Field2D {
            nx: grid.nx,
            ny: grid.ny,
            dx: grid.dx,
            dy: grid.dy,
            data: vec![C64::new(0.0, 0.0); grid.len()],
        }
    }

    /// Builds a field by evaluating f(x, y) at every cell center.
    pub fn from_fn(grid: &SimGrid, mut f: impl FnMut(f64, f64) -> C64) -> Self {
        let mut data = Vec::with_capacity(grid.len());
        for iy in 0..grid.ny {
            let y = grid.y(iy);
            for ix in 0..grid.nx {
                data.push(f(grid.x(ix), y));
            }
        }
        Field2D {
            nx: grid.nx,
            ny: grid.ny,
            dx: grid.dx,
            dy: grid.dy,
            data,
        }
    }

    pub fn cell_area(&self) -> f64 {
        self.dx * self.dy
    }

    /// Discrete L2 power: sum |E|^2 dx dy.
    pub fn power(&self) -> f64 {
        self.data.iter().map(|v| v.norm_sqr()).sum::<f64>() * self.cell_area()
    }

    /// Discrete inner product <self, other> = sum conj(self)*other dx dy.
    pub fn inner(&self, other: &Field2D) -> C64 {
        assert_eq!(
            (self.nx, self.ny),
            (other.nx, other.ny),
            "field shape mismatch"
        );
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a.conj() * b)
            .sum::<C64>()
            * self.cell_area()
    }

    /// Largest |E| over the grid.
    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    pub fn scale(&mut self, s: C64) {
        for v in &mut self.data {
            *v *= s;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data
            .iter()
            .all(|v| v.re.is_finite() && v.im.is_finite())
    }
}
