//! Thin 2D FFT layer over rustfft with cached plans.
//!
//! Convention: `forward` applies the unscaled DFT with kernel e^{-i k·r},
//! `inverse` applies the conjugate transform scaled by 1/(nx*ny), so
//! `inverse(forward(f)) == f` up to rounding. The adjoint of `forward` is
//! therefore `nx*ny * inverse`, which the gradient sweep relies on.
//!
//! Row-major layout: index = iy * nx + ix. The y pass works on a transposed
//! scratch copy so every 1D transform runs on contiguous memory.

use num_complex::Complex64 as C64;
use rustfft::{Fft, FftDirection, FftPlanner};
use std::sync::Arc;

/// Planned 2D transform for one grid shape. Cheap to clone: plans are
/// shared, scratch buffers are per-instance so clones can run on separate
/// worker threads.
pub struct Fft2 {
    nx: usize,
    ny: usize,
    fwd_x: Arc<dyn Fft<f64>>,
    fwd_y: Arc<dyn Fft<f64>>,
    inv_x: Arc<dyn Fft<f64>>,
    inv_y: Arc<dyn Fft<f64>>,
    scratch: Vec<C64>,
    transposed: Vec<C64>,
}

impl Clone for Fft2 {
    fn clone(&self) -> Self {
        Fft2 {
            nx: self.nx,
            ny: self.ny,
            fwd_x: Arc::clone(&self.fwd_x),
            fwd_y: Arc::clone(&self.fwd_y),
            inv_x: Arc::clone(&self.inv_x),
            inv_y: Arc::clone(&self.inv_y),
            scratch: vec![C64::new(0.0, 0.0); self.scratch.len()],
            transposed: vec![C64::new(0.0, 0.0); self.transposed.len()],
        }
    }
}

impl std::fmt::Debug for Fft2 {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Fft2({}x{})", self.nx, self.ny)
    }
}

impl Fft2 {
    pub fn new(nx: usize, ny: usize) -> Self {
        let mut planner = FftPlanner::new();
        let fwd_x = planner.plan_fft(nx, FftDirection::Forward);
        let fwd_y = planner.plan_fft(ny, FftDirection::Forward);
        let inv_x = planner.plan_fft(nx, FftDirection::Inverse);
        let inv_y = planner.plan_fft(ny, FftDirection::Inverse);
        let scratch_len = [&fwd_x, &fwd_y, &inv_x, &inv_y]
            .iter()
            .map(|p| p.get_inplace_scratch_len())
            .max()
            .unwrap_or(0);
        Fft2 {
            nx,
            ny,
            fwd_x,
            fwd_y,
            inv_x,
            inv_y,
            scratch: vec![C64::new(0.0, 0.0); scratch_len],
            transposed: vec![C64::new(0.0, 0.0); nx * ny],
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.nx, self.ny)
    }

    fn transpose_into(&mut self, data: &[C64]) {
        for iy in 0..self.ny {
            for ix in 0..self.nx {
                self.transposed[ix * self.ny + iy] = data[iy * self.nx + ix];
            }
        }
    }

    fn transpose_back(&self, data: &mut [C64]) {
        for iy in 0..self.ny {
            for ix in 0..self.nx {
                data[iy * self.nx + ix] = self.transposed[ix * self.ny + iy];
            }
        }
    }

    /// Unscaled forward DFT in place.
    pub fn forward(&mut self, data: &mut [C64]) {
        assert_eq!(data.len(), self.nx * self.ny, "field/plan shape mismatch");
        self.fwd_x
            .process_with_scratch(data, &mut self.scratch);
        self.transpose_into(data);
        let fwd_y = Arc::clone(&self.fwd_y);
        fwd_y.process_with_scratch(&mut self.transposed, &mut self.scratch);
        self.transpose_back(data);
    }

    /// Conjugate transform scaled by 1/(nx*ny), inverse of `forward`.
    pub fn inverse(&mut self, data: &mut [C64]) {
        assert_eq!(data.len(), self.nx * self.ny, "field/plan shape mismatch");
        self.inv_x
            .process_with_scratch(data, &mut self.scratch);
        self.transpose_into(data);
        let inv_y = Arc::clone(&self.inv_y);
        inv_y.process_with_scratch(&mut self.transposed, &mut self.scratch);
        self.transpose_back(data);
        let scale = 1.0 / (self.nx * self.ny) as f64;
        for v in data.iter_mut() {
            *v *= scale;
        }
    }
}
