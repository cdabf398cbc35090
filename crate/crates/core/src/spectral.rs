//! Frequency grids, pump envelope, phase matching and the baseline joint
//! spectral amplitude of a single pass through a type-II crystal.
//!
//! All angular frequencies are in rad/s, wavevectors in rad/m and lengths in m.
//! The amplitude is dimensionless: every coupling constant is folded into one
//! overall normalization.

use std::f64::consts::{LN_2, PI, TAU};
use std::path::Path;

use ndarray::{Array2, Zip};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Pump center wavelength of the reference setup (m).
pub const PUMP_WAVELENGTH: f64 = 792e-9;
/// Pump 3-dB bandwidth of the reference setup (m).
pub const PUMP_FWHM_WAVELENGTH: f64 = 0.2e-9;
pub const CRYSTAL_LENGTH: f64 = 0.040;
pub const POLING_PERIOD: f64 = 21.5e-6;

/// Default inverse-group-velocity difference (s/m) shared by both photons.
/// Keeps the sum-frequency sinc much wider than the pump envelope.
pub const DEFAULT_BETA_MEAN: f64 = 1.0e-11;
/// Default difference between the signal and idler inverse group velocities
/// (s/m). Sets the antidiagonal ridge to a 2.3 THz FWHM, 3.8 THz at -10 dB.
pub const DEFAULT_BETA_SPLIT: f64 = 9.71e-12;

pub const DEFAULT_GRID_POINTS: usize = 2048;
pub const DEFAULT_GRID_SPAN_HZ: f64 = 12e12;

const NORM_TOLERANCE: f64 = 1e-6;

/// `sin(x)/x`, continuous at zero.
pub fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0 - x * x / 6.0
    } else {
        x.sin() / x
    }
}

pub fn wavelength_to_omega(lambda: f64) -> f64 {
    TAU * SPEED_OF_LIGHT / lambda
}

pub fn omega_to_wavelength(omega: f64) -> f64 {
    TAU * SPEED_OF_LIGHT / omega
}

/// Converts a wavelength FWHM at `lambda` to a frequency FWHM in Hz.
pub fn wavelength_width_to_hz(lambda: f64, width: f64) -> f64 {
    SPEED_OF_LIGHT * width / (lambda * lambda)
}

/// Square grid of angular frequencies shared by both photons.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencyGrid {
    omega_a: Vec<f64>,
    omega_b: Vec<f64>,
    center: f64,
}

impl FrequencyGrid {
    /// Uniform square grid of `n` points per axis spanning `center ± span/2`.
    pub fn new(center: f64, span: f64, n: usize) -> Result<Self> {
        if n < 8 {
            return Err(Error::InvalidGrid(format!("need at least 8 points, got {n}")));
        }
        if !(span > 0.0) || !span.is_finite() || !center.is_finite() {
            return Err(Error::InvalidGrid(format!("span must be positive, got {span}")));
        }
        let step = span / (n - 1) as f64;
        let start = center - span / 2.0;
        let axis: Vec<f64> = (0..n).map(|i| start + i as f64 * step).collect();
        Ok(Self { omega_a: axis.clone(), omega_b: axis, center })
    }

    /// Grid from explicit axes. Used when resampling or cropping.
    pub fn from_axes(omega_a: Vec<f64>, omega_b: Vec<f64>, center: f64) -> Result<Self> {
        if omega_a.len() < 2 || omega_b.len() < 2 {
            return Err(Error::InvalidGrid("axes need at least two points".into()));
        }
        for axis in [&omega_a, &omega_b] {
            if axis.windows(2).any(|w| !(w[1] > w[0])) {
                return Err(Error::InvalidGrid("axes must be strictly increasing".into()));
            }
        }
        Ok(Self { omega_a, omega_b, center })
    }

    pub fn n_a(&self) -> usize {
        self.omega_a.len()
    }

    pub fn n_b(&self) -> usize {
        self.omega_b.len()
    }

    pub fn omega_a(&self) -> &[f64] {
        &self.omega_a
    }

    pub fn omega_b(&self) -> &[f64] {
        &self.omega_b
    }

    pub fn center(&self) -> f64 {
        self.center
    }

    pub fn step_a(&self) -> f64 {
        (self.omega_a[self.omega_a.len() - 1] - self.omega_a[0]) / (self.omega_a.len() - 1) as f64
    }

    pub fn step_b(&self) -> f64 {
        (self.omega_b[self.omega_b.len() - 1] - self.omega_b[0]) / (self.omega_b.len() - 1) as f64
    }

    /// Area element `δω_a·δω_b`.
    pub fn cell_area(&self) -> f64 {
        self.step_a() * self.step_b()
    }

    pub fn is_square(&self) -> bool {
        self.omega_a == self.omega_b
    }

    /// Checks that both axes have a constant step to within `1e-9` of the step.
    pub fn check_uniform(&self) -> Result<()> {
        for (name, axis, step) in [
            ("a", &self.omega_a, self.step_a()),
            ("b", &self.omega_b, self.step_b()),
        ] {
            for w in axis.windows(2) {
                if ((w[1] - w[0]) - step).abs() > 1e-9 * step {
                    return Err(Error::NonUniformGrid(format!(
                        "axis {name} step {} deviates from {step}",
                        w[1] - w[0]
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn omega_a_hz(&self) -> Vec<f64> {
        self.omega_a.iter().map(|w| w / TAU).collect()
    }

    pub fn omega_b_hz(&self) -> Vec<f64> {
        self.omega_b.iter().map(|w| w / TAU).collect()
    }
}

/// Builds the default square grid `center ± span/2` with `n` points.
pub fn build_frequency_grid(center: f64, span: f64, n: usize) -> Result<FrequencyGrid> {
    FrequencyGrid::new(center, span, n)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum PumpShape {
    Gaussian,
    Sech2,
    /// Sampled amplitude `(ω, α)` pairs with linear interpolation.
    Tabulated { samples: Vec<(f64, f64)> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PumpSpectrum {
    /// Center angular frequency (rad/s).
    pub omega_center: f64,
    /// Spectral FWHM in Hz, measured on the amplitude envelope.
    pub fwhm_hz: f64,
    pub shape: PumpShape,
}

impl PumpSpectrum {
    pub fn from_wavelength(lambda: f64, fwhm_lambda: f64, shape: PumpShape) -> Self {
        Self {
            omega_center: wavelength_to_omega(lambda),
            fwhm_hz: wavelength_width_to_hz(lambda, fwhm_lambda),
            shape,
        }
    }

    /// 792 nm, 0.2 nm Gaussian pump.
    pub fn reference() -> Self {
        Self::from_wavelength(PUMP_WAVELENGTH, PUMP_FWHM_WAVELENGTH, PumpShape::Gaussian)
    }

    pub fn fwhm_omega(&self) -> f64 {
        TAU * self.fwhm_hz
    }

    /// Degenerate single-photon angular frequency, half the pump center.
    pub fn degenerate_omega(&self) -> f64 {
        0.5 * self.omega_center
    }
}

/// Pump amplitude `α(ω_sum)`, unit peak at the pump center.
pub fn pump_envelope(pump: &PumpSpectrum, omega_sum: f64) -> Result<Complex64> {
    let detuning = omega_sum - pump.omega_center;
    let half_width = 0.5 * pump.fwhm_omega();
    let value = match &pump.shape {
        PumpShape::Gaussian => {
            // α = 1/2 at ±FWHM/2
            let sigma = pump.fwhm_omega() / (2.0 * (2.0 * LN_2).sqrt());
            (-detuning * detuning / (2.0 * sigma * sigma)).exp()
        }
        PumpShape::Sech2 => {
            let width = half_width / std::f64::consts::SQRT_2.acosh();
            let s = 1.0 / (detuning / width).cosh();
            if s.is_finite() {
                s * s
            } else {
                0.0
            }
        }
        PumpShape::Tabulated { samples } => interpolate_pairs(samples, omega_sum)?,
    };
    Ok(Complex64::new(value, 0.0))
}

fn interpolate_pairs(samples: &[(f64, f64)], x: f64) -> Result<f64> {
    let (first, last) = match (samples.first(), samples.last()) {
        (Some(f), Some(l)) => (f.0, l.0),
        _ => return Err(Error::OutOfRange("empty table".into())),
    };
    if !(x >= first && x <= last) {
        return Err(Error::OutOfRange(format!("{x:e} outside [{first:e}, {last:e}]")));
    }
    let idx = samples.partition_point(|s| s.0 <= x);
    if idx == samples.len() {
        return Ok(samples[samples.len() - 1].1);
    }
    let (x0, y0) = samples[idx - 1];
    let (x1, y1) = samples[idx];
    Ok(y0 + (y1 - y0) * (x - x0) / (x1 - x0))
}

/// A sampled wavevector curve `k(ω)` with linear interpolation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WavevectorCurve {
    samples: Vec<(f64, f64)>,
}

impl WavevectorCurve {
    pub fn new(mut samples: Vec<(f64, f64)>) -> Result<Self> {
        if samples.len() < 2 {
            return Err(Error::InvalidInput("wavevector curve needs two samples".into()));
        }
        samples.sort_by(|a, b| a.0.total_cmp(&b.0));
        if samples.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(Error::InvalidInput("duplicate frequency in wavevector curve".into()));
        }
        Ok(Self { samples })
    }

    pub fn eval(&self, omega: f64) -> Result<f64> {
        interpolate_pairs(&self.samples, omega)
    }

    pub fn range(&self) -> (f64, f64) {
        (self.samples[0].0, self.samples[self.samples.len() - 1].0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "variant")]
pub enum PhaseMatchModel {
    /// First-order expansion about the degenerate point `center`.
    Linearized {
        /// Residual mismatch at degeneracy after the grating vector (rad/m).
        delta_k0: f64,
        /// Signal (H) inverse-group-velocity difference to the pump (s/m).
        beta_h: f64,
        /// Idler (V) inverse-group-velocity difference to the pump (s/m).
        beta_v: f64,
        center: f64,
    },
    Tabulated {
        k_h: WavevectorCurve,
        k_v: WavevectorCurve,
        k_p: WavevectorCurve,
    },
}

impl PhaseMatchModel {
    /// Linearized model with the default ridge geometry.
    pub fn default_linearized(center: f64) -> Self {
        PhaseMatchModel::Linearized {
            delta_k0: 0.0,
            beta_h: DEFAULT_BETA_MEAN + 0.5 * DEFAULT_BETA_SPLIT,
            beta_v: DEFAULT_BETA_MEAN - 0.5 * DEFAULT_BETA_SPLIT,
            center,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let PhaseMatchModel::Linearized { delta_k0, beta_h, beta_v, center } = self {
            if ![*delta_k0, *beta_h, *beta_v, *center].iter().all(|v| v.is_finite()) {
                return Err(Error::InvalidInput("linearized phase-match values must be finite".into()));
            }
        }
        Ok(())
    }

    /// Loads a tabulated model from CSV with columns
    /// `nu_hz,k_rad_per_m,polarization` where polarization is `H`, `V` or `P`.
    pub fn from_csv_str(text: &str) -> Result<Self> {
        let mut h = Vec::new();
        let mut v = Vec::new();
        let mut p = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let cols: Vec<&str> = line.split(',').map(str::trim).collect();
            if cols.len() != 3 {
                return Err(Error::InvalidInput(format!(
                    "line {}: expected 3 columns, found {}",
                    lineno + 1,
                    cols.len()
                )));
            }
            let (Ok(nu), Ok(k)) = (cols[0].parse::<f64>(), cols[1].parse::<f64>()) else {
                if lineno == 0 {
                    continue; // header
                }
                return Err(Error::InvalidInput(format!("line {}: not numeric", lineno + 1)));
            };
            let target = match cols[2] {
                "H" | "h" => &mut h,
                "V" | "v" => &mut v,
                "P" | "p" => &mut p,
                other => {
                    return Err(Error::InvalidInput(format!(
                        "line {}: unknown polarization {other:?}",
                        lineno + 1
                    )))
                }
            };
            target.push((TAU * nu, k));
        }
        Ok(PhaseMatchModel::Tabulated {
            k_h: WavevectorCurve::new(h)?,
            k_v: WavevectorCurve::new(v)?,
            k_p: WavevectorCurve::new(p)?,
        })
    }

    pub fn from_csv_file(path: &Path) -> Result<Self> {
        Self::from_csv_str(&std::fs::read_to_string(path)?)
    }
}

/// Phase mismatch `Δk(ω_a, ω_b)` in rad/m.
pub fn phase_mismatch(
    model: &PhaseMatchModel,
    poling_period: f64,
    omega_a: f64,
    omega_b: f64,
) -> Result<f64> {
    match model {
        PhaseMatchModel::Linearized { delta_k0, beta_h, beta_v, center } => {
            Ok(delta_k0 + beta_h * (omega_a - center) + beta_v * (omega_b - center))
        }
        PhaseMatchModel::Tabulated { k_h, k_v, k_p } => Ok(k_h.eval(omega_a)? + k_v.eval(omega_b)?
            - k_p.eval(omega_a + omega_b)?
            - TAU / poling_period),
    }
}

/// `L·sinc(ΔkL/2)`.
pub fn phase_matching_function(delta_k: f64, length: f64) -> f64 {
    length * sinc(0.5 * delta_k * length)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrystalSpec {
    pub length: f64,
    pub poling_period: f64,
    /// Oven temperature, carried as metadata only.
    pub temperature_c: Option<f64>,
    pub model: PhaseMatchModel,
}

impl CrystalSpec {
    /// 40 mm crystal, 21.5 µm poling, linearized model about `center`.
    pub fn reference(center: f64) -> Self {
        Self {
            length: CRYSTAL_LENGTH,
            poling_period: POLING_PERIOD,
            temperature_c: Some(42.0),
            model: PhaseMatchModel::default_linearized(center),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.length > 0.0) || !(self.poling_period > 0.0) {
            return Err(Error::InvalidInput("crystal length and poling period must be positive".into()));
        }
        self.model.validate()
    }
}

/// Complex two-photon amplitude sampled on a [`FrequencyGrid`].
#[derive(Debug, Clone, PartialEq)]
pub struct JointAmplitude {
    pub grid: FrequencyGrid,
    pub values: Array2<Complex64>,
    pub normalized: bool,
    /// Set when the phase was discarded (amplitude rebuilt from intensity).
    pub flat_phase: bool,
}

impl JointAmplitude {
    pub fn new(grid: FrequencyGrid, values: Array2<Complex64>) -> Result<Self> {
        if values.dim() != (grid.n_a(), grid.n_b()) {
            return Err(Error::InvalidGrid(format!(
                "array shape {:?} does not match grid {}x{}",
                values.dim(),
                grid.n_a(),
                grid.n_b()
            )));
        }
        Ok(Self { grid, values, normalized: false, flat_phase: false })
    }

    /// `Σ|f|²·δω_a·δω_b`.
    pub fn norm_sq(&self) -> f64 {
        self.values.iter().map(|v| v.norm_sqr()).sum::<f64>() * self.grid.cell_area()
    }

    pub fn normalize(&mut self) -> Result<()> {
        let norm = self.norm_sq();
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(Error::UndefinedState(format!("cannot normalize amplitude with norm {norm}")));
        }
        let scale = 1.0 / norm.sqrt();
        self.values.mapv_inplace(|v| v * scale);
        self.normalized = true;
        Ok(())
    }

    pub fn normalized(&self) -> Result<Self> {
        let mut out = self.clone();
        out.normalize()?;
        Ok(out)
    }

    pub fn is_normalized(&self) -> bool {
        (self.norm_sq() - 1.0).abs() <= NORM_TOLERANCE
    }

    /// Elementwise `|f|²`.
    pub fn intensity(&self) -> Array2<f64> {
        self.values.mapv(|v| v.norm_sqr())
    }
}

/// Baseline single-pass amplitude `α(ω_a+ω_b)·sinc(Δk·L/2)`.
pub fn build_jsa(
    grid: &FrequencyGrid,
    pump: &PumpSpectrum,
    crystal: &CrystalSpec,
    normalize: bool,
) -> Result<JointAmplitude> {
    crystal.validate()?;
    if let PhaseMatchModel::Tabulated { k_h, k_v, k_p } = &crystal.model {
        let (a0, a1) = (grid.omega_a()[0], grid.omega_a()[grid.n_a() - 1]);
        let (b0, b1) = (grid.omega_b()[0], grid.omega_b()[grid.n_b() - 1]);
        let covers = |c: &WavevectorCurve, lo: f64, hi: f64| {
            let (r0, r1) = c.range();
            r0 <= lo && r1 >= hi
        };
        if !covers(k_h, a0, a1) || !covers(k_v, b0, b1) || !covers(k_p, a0 + b0, a1 + b1) {
            return Err(Error::OutOfRange("tabulated curves do not cover the grid".into()));
        }
    }
    if let PumpShape::Tabulated { samples } = &pump.shape {
        let lo = grid.omega_a()[0] + grid.omega_b()[0];
        let hi = grid.omega_a()[grid.n_a() - 1] + grid.omega_b()[grid.n_b() - 1];
        if samples.first().is_none_or(|s| s.0 > lo) || samples.last().is_none_or(|s| s.0 < hi) {
            return Err(Error::OutOfRange("tabulated pump does not cover the grid".into()));
        }
    }
    let half_length = 0.5 * crystal.length;
    let omega_a = grid.omega_a();
    let omega_b = grid.omega_b();
    let mut values = Array2::<Complex64>::zeros((grid.n_a(), grid.n_b()));
    // ranges were checked above, so the lookups below cannot fail
    Zip::indexed(&mut values).par_for_each(|(i, j), out| {
        let (wa, wb) = (omega_a[i], omega_b[j]);
        let alpha = pump_envelope(pump, wa + wb).unwrap_or_default();
        let dk = phase_mismatch(&crystal.model, crystal.poling_period, wa, wb).unwrap_or(f64::NAN);
        *out = alpha * sinc(dk * half_length);
    });
    if values.iter().any(|v| !v.re.is_finite()) {
        return Err(Error::InvalidInput("non-finite amplitude".into()));
    }
    let mut jsa = JointAmplitude::new(grid.clone(), values)?;
    if normalize {
        jsa.normalize()?;
    }
    Ok(jsa)
}

/// Full width at half maximum (Hz) of the single-photon ridge for the
/// linearized model, measured along the anticorrelated direction.
pub fn ridge_fwhm_hz(beta_h: f64, beta_v: f64, length: f64) -> f64 {
    // sinc²(x) = 1/2 at x = 1.39156
    2.0 * 1.391_557_378_251_7 / (PI * (beta_h - beta_v).abs() * length)
}
