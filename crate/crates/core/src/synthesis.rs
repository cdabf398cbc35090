//! Two-pass (bidirectional) pump synthesis and the frequency/time transform.
//!
//! The second pass contributes the same amplitude delayed by `Δt_H` on the
//! signal and `Δt_V` on the idler and multiplied by `e^{iφ}`:
//!
//! ```text
//! f'(ω_a, ω_b) = f(ω_a, ω_b) · [1 + e^{iφ} e^{-i(ω_a Δt_H + ω_b Δt_V)}]
//! ```
//!
//! Phases use absolute angular frequencies. The constant factor
//! `e^{-iω₀(Δt_H + Δt_V)}` this introduces is equivalent to a shift of `φ` and
//! vanishes for the antisymmetric setting `Δt_H = -Δt_V`.
//!
//! # Transform convention
//!
//! The joint temporal amplitude is
//!
//! ```text
//! f(t_a, t_b) = 1/(2π) ∬ dω_a dω_b e^{+iω_a t_a} e^{+iω_b t_b} f(ω_a, ω_b)
//! ```
//!
//! discretized as a plain Riemann sum on the frequency grid, with time step
//! `δt = 2π/(n·δω)` and time axis `t_p = (p - n/2)·δt`. The inverse uses the
//! conjugate kernel and the same `1/(2π)` factor, so the pair is unitary in the
//! sense `Σ|f(t)|²δt² = Σ|f(ω)|²δω²`.

use std::f64::consts::TAU;
use std::sync::Arc;

use ndarray::{Array2, Axis, Zip};
use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectral::{FrequencyGrid, JointAmplitude, PUMP_WAVELENGTH, SPEED_OF_LIGHT};

/// Pulse repetition rate of the reference laser (Hz).
pub const REPETITION_RATE: f64 = 76e6;

/// Mirror displacements are traversed twice on reflection.
pub const PATH_MULTIPLIER: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthesisConfig {
    /// Signal (H) delay of the second pass relative to the pump (s).
    pub delay_h: f64,
    /// Idler (V) delay of the second pass relative to the pump (s).
    pub delay_v: f64,
    /// Relative phase of the second pass, in `[0, 2π)`.
    pub phase: f64,
    /// Pump wavelength used for path-to-phase conversion (m).
    pub pump_wavelength: f64,
}

impl Default for SynthesisConfig {
    fn default() -> Self {
        Self { delay_h: 0.0, delay_v: 0.0, phase: 0.0, pump_wavelength: PUMP_WAVELENGTH }
    }
}

impl SynthesisConfig {
    pub fn new(delay_h: f64, delay_v: f64, phase: f64) -> Result<Self> {
        let cfg = Self { delay_h, delay_v, phase: wrap_phase(phase), pump_wavelength: PUMP_WAVELENGTH };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Antisymmetric delays `Δt_H = -Δt_V = Δt₋/2` for an antidiagonal
    /// separation `Δt₋`.
    pub fn antisymmetric(separation: f64, phase: f64) -> Result<Self> {
        Self::new(0.5 * separation, -0.5 * separation, phase)
    }

    /// Delays for a target single-photon bin spacing `Δν = 1/Δt₋`.
    pub fn for_bin_spacing(spacing_hz: f64, phase: f64) -> Result<Self> {
        if !(spacing_hz > 0.0) {
            return Err(Error::InvalidInput("bin spacing must be positive".into()));
        }
        Self::antisymmetric(1.0 / spacing_hz, phase)
    }

    pub fn from_geometry(geometry: &StageGeometry, pump_wavelength: f64) -> Result<Self> {
        let (delay_h, delay_v, _) = displacement_to_delays(geometry, SPEED_OF_LIGHT);
        let phase = phase_from_path(geometry, pump_wavelength)?;
        let cfg = Self { delay_h, delay_v, phase, pump_wavelength };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let period = 1.0 / REPETITION_RATE;
        if !(self.delay_h.abs() <= period) || !(self.delay_v.abs() <= period) {
            return Err(Error::InvalidInput(format!(
                "delays ({:e}, {:e}) s exceed the pump pulse period {period:e} s",
                self.delay_h, self.delay_v
            )));
        }
        if !(0.0..TAU).contains(&self.phase) {
            return Err(Error::InvalidInput(format!("phase {} outside [0, 2π)", self.phase)));
        }
        if !(self.pump_wavelength > 0.0) {
            return Err(Error::InvalidInput("pump wavelength must be positive".into()));
        }
        Ok(())
    }

    /// Antidiagonal temporal separation `Δt₋ = Δt_H - Δt_V`.
    pub fn separation(&self) -> f64 {
        self.delay_h - self.delay_v
    }

    /// Expected single-photon bin spacing `1/|Δt₋|`, if any modulation.
    pub fn bin_spacing_hz(&self) -> Option<f64> {
        let s = self.separation().abs();
        (s > 0.0).then(|| 1.0 / s)
    }

    /// Two-photon delay at which the cross-pass interference feature sits.
    pub fn hom_center(&self) -> f64 {
        -0.5 * self.separation()
    }
}

/// Reduces an angle to `[0, 2π)`.
pub fn wrap_phase(phase: f64) -> f64 {
    let p = phase.rem_euclid(TAU);
    if p >= TAU {
        0.0
    } else {
        p
    }
}

/// Mirror displacements (m) from the temporal origin. M1 acts on the signal,
/// M2 on the idler, M3 on the pump for the second pass.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StageGeometry {
    pub d1: f64,
    pub d2: f64,
    pub d3: f64,
}

impl StageGeometry {
    pub fn path_multiplier(&self) -> f64 {
        PATH_MULTIPLIER
    }
}

/// `(Δt_H, Δt_V, Δt₋)` from mirror displacements, round trip included.
pub fn displacement_to_delays(geometry: &StageGeometry, c_light: f64) -> (f64, f64, f64) {
    let dh = PATH_MULTIPLIER * geometry.d1 / c_light;
    let dv = PATH_MULTIPLIER * geometry.d2 / c_light;
    (dh, dv, dh - dv)
}

/// Relative phase `2π·(2·d3)/λ_p` reduced to `[0, 2π)`.
pub fn phase_from_path(geometry: &StageGeometry, pump_wavelength: f64) -> Result<f64> {
    if !(pump_wavelength > 0.0) {
        return Err(Error::InvalidInput("pump wavelength must be positive".into()));
    }
    let path = PATH_MULTIPLIER * geometry.d3;
    Ok(wrap_phase(TAU * path / pump_wavelength))
}

/// Multiplies the amplitude by the two-pass interference factor. The result is
/// not renormalized.
pub fn apply_bidirectional(f: &JointAmplitude, cfg: &SynthesisConfig) -> JointAmplitude {
    let omega_a = f.grid.omega_a();
    let omega_b = f.grid.omega_b();
    let second = Complex64::from_polar(1.0, cfg.phase);
    let mut values = f.values.clone();
    Zip::indexed(&mut values).par_for_each(|(i, j), v| {
        let arg = -(omega_a[i] * cfg.delay_h + omega_b[j] * cfg.delay_v);
        *v *= Complex64::new(1.0, 0.0) + second * Complex64::from_polar(1.0, arg);
    });
    JointAmplitude { grid: f.grid.clone(), values, normalized: false, flat_phase: f.flat_phase }
}

/// Observable joint spectral intensity `|f|²`.
pub fn jsi_from_amplitude(f: &JointAmplitude) -> Array2<f64> {
    f.intensity()
}

#[derive(Debug, Clone, PartialEq)]
pub struct JointTemporalAmplitude {
    pub t_a: Vec<f64>,
    pub t_b: Vec<f64>,
    pub values: Array2<Complex64>,
    /// Frequency grid the transform was taken from; needed to go back.
    pub frequency_grid: FrequencyGrid,
}

impl JointTemporalAmplitude {
    pub fn step_a(&self) -> f64 {
        self.t_a[1] - self.t_a[0]
    }

    pub fn step_b(&self) -> f64 {
        self.t_b[1] - self.t_b[0]
    }

    /// `Σ|f|²·δt_a·δt_b`.
    pub fn norm_sq(&self) -> f64 {
        self.values.iter().map(|v| v.norm_sqr()).sum::<f64>() * self.step_a() * self.step_b()
    }

    pub fn intensity(&self) -> Array2<f64> {
        self.values.mapv(|v| v.norm_sqr())
    }
}

fn time_axis(n: usize, step_omega: f64) -> Vec<f64> {
    let dt = TAU / (n as f64 * step_omega);
    (0..n).map(|p| (p as f64 - (n / 2) as f64) * dt).collect()
}

/// Applies `out_k = post_k · Σ_m pre_m·x_m·e^{±2πi·mk/n}` along one axis.
fn transform_axis(
    values: &mut Array2<Complex64>,
    axis: Axis,
    fft: &Arc<dyn Fft<f64>>,
    pre: &[Complex64],
    post: &[Complex64],
) {
    // each lane along `axis` is transformed independently
    let other = Axis(1 - axis.index());
    values.axis_iter_mut(other).into_par_iter().for_each(|mut lane| {
        let mut buf: Vec<Complex64> = lane.iter().zip(pre).map(|(x, p)| x * p).collect();
        fft.process(&mut buf);
        for ((dst, src), q) in lane.iter_mut().zip(buf).zip(post) {
            *dst = src * q;
        }
    });
}

/// Frequency → time.
pub fn to_time(f: &JointAmplitude) -> Result<JointTemporalAmplitude> {
    let grid = &f.grid;
    grid.check_uniform()?;
    let mut planner = FftPlanner::<f64>::new();
    let mut values = f.values.clone();
    let mut axes = Vec::with_capacity(2);
    for (axis, omega) in [(Axis(0), grid.omega_a()), (Axis(1), grid.omega_b())] {
        let n = omega.len();
        let step = (omega[n - 1] - omega[0]) / (n - 1) as f64;
        let t = time_axis(n, step);
        let (w0, t0) = (omega[0], t[0]);
        let pre: Vec<Complex64> =
            (0..n).map(|i| Complex64::from_polar(1.0, i as f64 * step * t0)).collect();
        let post: Vec<Complex64> = t.iter().map(|tp| Complex64::from_polar(1.0, w0 * tp)).collect();
        let fft = planner.plan_fft_inverse(n);
        transform_axis(&mut values, axis, &fft, &pre, &post);
        axes.push(t);
    }
    let scale = grid.cell_area() / TAU;
    values.mapv_inplace(|v| v * scale);
    let t_b = axes.pop().unwrap_or_default();
    let t_a = axes.pop().unwrap_or_default();
    Ok(JointTemporalAmplitude { t_a, t_b, values, frequency_grid: grid.clone() })
}

/// Time → frequency, onto the grid the temporal amplitude was derived from.
pub fn to_frequency(jta: &JointTemporalAmplitude) -> Result<JointAmplitude> {
    let grid = &jta.frequency_grid;
    grid.check_uniform()?;
    let mut planner = FftPlanner::<f64>::new();
    let mut values = jta.values.clone();
    for (axis, omega, t) in [(Axis(0), grid.omega_a(), &jta.t_a), (Axis(1), grid.omega_b(), &jta.t_b)] {
        let n = omega.len();
        let step_t = t[1] - t[0];
        let (w0, t0) = (omega[0], t[0]);
        let pre: Vec<Complex64> =
            (0..n).map(|p| Complex64::from_polar(1.0, -w0 * p as f64 * step_t)).collect();
        let post: Vec<Complex64> = omega.iter().map(|w| Complex64::from_polar(1.0, -w * t0)).collect();
        let fft = planner.plan_fft_forward(n);
        transform_axis(&mut values, axis, &fft, &pre, &post);
    }
    let scale = jta.step_a() * jta.step_b() / TAU;
    values.mapv_inplace(|v| v * scale);
    JointAmplitude::new(grid.clone(), values)
}

/// Projection of `|f(t_a, t_b)|²` onto the time-difference axis
/// `t₋ = t_a - t_b`, indexed by `k = p - q` from `-(n-1)` to `n-1`.
pub fn time_difference_profile(jta: &JointTemporalAmplitude) -> (Vec<f64>, Vec<f64>) {
    let (na, nb) = jta.values.dim();
    let n = na.min(nb);
    let dt = jta.step_a();
    let mut profile = vec![0.0; 2 * n - 1];
    for p in 0..n {
        for q in 0..n {
            profile[p + n - 1 - q] += jta.values[[p, q]].norm_sqr();
        }
    }
    let offset = jta.t_a[0] - jta.t_b[0];
    let axis = (0..2 * n - 1).map(|k| offset + (k as f64 - (n - 1) as f64) * dt).collect();
    (axis, profile)
}
