//! Scans the training loss of the pump-waist scenario over a range of
//! waists, without running the optimizer. The pump focuses mid-crystal and
//! diffracts; the minimum should sit near the confocal waist sqrt(L / k_p),
//! where the pump Rayleigh range is half the crystal: focusing harder makes
//! the pump spread inside the crystal (washing out the pair correlations),
//! focusing softer mismatches the detection acceptance.
//!
//! Run with `cargo run --release --example pump_waist_landscape`.
//! Environment knobs: SPDCINV_LANDSCAPE_N (realizations, default 64),
//! SPDCINV_LANDSCAPE_AMP (pump amplitude, default 0.01),
//! SPDCINV_LANDSCAPE_W0/_STEP/_POINTS (scan range in um),
//! SPDCINV_LANDSCAPE_G2 (0 skips the per-point coincidence columns).

use num_complex::Complex64 as C64;
use spdcinv::grid::{build_grid, wave_params, Poling};
use spdcinv::inverse::{infer, loss_value, ForwardModel, TargetSpec};
use spdcinv::medium::{ParamVector, TrainGroups};
use spdcinv::modes::{ModeSet, ModeSpec, PostSelect};
use spdcinv::observables::CoincidenceMatrix;
use spdcinv::pool::worker_count;
use spdcinv::propagator::NoiseSpec;

fn env_f64(name: &str, default: f64) -> f64 {
    std::env::var(name)
        .ok()
        .and_then(|s| s.parse().ok())
        .unwrap_or(default)
}

fn main() -> spdcinv::Result<()> {
    let length = 5e-3;
    let grid = build_grid(128, 128, 2e-6, 2e-6, 1.25e-4, length)?;
    let waves = wave_params(
        405e-9, 810e-9, 810e-9, 1.692, 1.661, 1.661, 3.6e-12,
        Poling::AutoQpm,
    )?;
    let w_confocal = (length / waves.k_p).sqrt();
    let w_detect = (length / waves.k_s).sqrt();
    println!(
        "confocal pump waist {:.2} um, detection waist {:.2} um",
        w_confocal * 1e6,
        w_detect * 1e6
    );

    let w_detect = env_f64("SPDCINV_LANDSCAPE_WDET", w_detect);
    let detection = ModeSet::new(
        vec![
            ModeSpec::hg(0, 0, w_detect, length / 2.0),
            ModeSpec::hg(1, 0, w_detect, length / 2.0),
        ],
        PostSelect::HgM0,
    )?;
    let crystal = ModeSet::new(
        vec![ModeSpec::hg(1, 0, 35e-6, 0.0)],
        PostSelect::None,
    )?;

    // Bell target over the two kept detection modes; the diagonal is
    // forbidden by the odd crystal parity, so the loss measures how much
    // accidental mass leaks back onto it.
    let target = TargetSpec::coincidence(
        CoincidenceMatrix {
            row_labels: detection.specs.iter().map(|s| s.label()).collect(),
            col_labels: detection.specs.iter().map(|s| s.label()).collect(),
            values: vec![0.0, 0.5, 0.5, 0.0],
            clamped_mass: 0.0,
        },
        1.0,
        0.5,
    );

    let n = env_f64("SPDCINV_LANDSCAPE_N", 64.0) as usize;
    let amplitude = env_f64("SPDCINV_LANDSCAPE_AMP", 0.01);
    let model = ForwardModel {
        grid,
        waves: waves.clone(),
        noise: NoiseSpec {
            n_realizations: n,
            master_seed: env_f64("SPDCINV_LANDSCAPE_SEED", 7001.0) as u64,
            noise_std: 1.0,
        },
        amplitude,
        detection,
    };
    let workers = worker_count();
    let w0 = env_f64("SPDCINV_LANDSCAPE_W0", 12.2);
    let w_step = env_f64("SPDCINV_LANDSCAPE_STEP", 1.0);
    let points = env_f64("SPDCINV_LANDSCAPE_POINTS", 13.0) as usize;
    let with_g2 = env_f64("SPDCINV_LANDSCAPE_G2", 1.0) != 0.0;
    println!("N = {n}, amplitude = {amplitude}, workers = {workers}");
    if with_g2 {
        println!(
            "{:>10} {:>14} {:>10} {:>10} {:>10} {:>10}",
            "waist_um", "loss", "g2_00", "g2_01", "g2_10", "g2_11"
        );
    } else {
        println!("{:>10} {:>14}", "waist_um", "loss");
    }

    for step in 0..points {
        let w_pump = (w0 + w_step * step as f64) * 1e-6;
        let pump = ModeSet::new(
            vec![ModeSpec::hg(0, 0, w_pump, length / 2.0)],
            PostSelect::None,
        )?;
        let theta = ParamVector::new(
            pump,
            vec![C64::new(1.0, 0.0)],
            vec![w_pump],
            crystal.clone(),
            vec![C64::new(1.0, 0.0)],
            vec![35e-6],
            TrainGroups {
                pump_coeffs: false,
                pump_waists: true,
                crystal_coeffs: false,
                crystal_waists: false,
            },
        )?;
        let loss = loss_value(&theta, &target, &model, workers)?;
        if with_g2 {
            let report = infer(&theta, &model, None, None, workers)?;
            let g = &report.g2;
            println!(
                "{:>10.2} {:>14.6e} {:>10.4} {:>10.4} {:>10.4} {:>10.4}",
                w_pump * 1e6,
                loss,
                g.get(0, 0),
                g.get(0, 1),
                g.get(1, 0),
                g.get(1, 1)
            );
        } else {
            println!("{:>10.2} {:>14.6e}", w_pump * 1e6, loss);
        }
    }
    Ok(())
}
