//! Two-photon (Hong-Ou-Mandel) interference versus relative delay.
//!
//! The coincidence probability is
//!
//! ```text
//! P(τ) = ½ [1 - Re Σ f(ω_a, ω_b) f*(ω_b, ω_a) e^{-i(ω_a - ω_b)τ} / Σ |f|²]
//! ```
//!
//! On a square uniform grid `ω_a - ω_b = (i - j)·δω`, so the double sum
//! collapses to a one-dimensional sum over diagonals that is computed once and
//! then evaluated per delay.


use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectral::JointAmplitude;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Extremum {
    Dip,
    Peak,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FringeMetrics {
    /// Spacing between the central feature and its neighbours (s).
    pub period: f64,
    /// `|P_far - P(0)| / P_far`.
    pub visibility: f64,
    pub central: Extremum,
    /// Coincidence probability at zero relative delay.
    pub central_value: f64,
    /// Baseline taken from the outer tenth of the scan on each side.
    pub far_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HomCurve {
    /// Delays relative to `center` (s).
    pub delays: Vec<f64>,
    pub probability: Vec<f64>,
    /// Absolute delay the scan is centred on (s).
    pub center: f64,
    /// Filled when the curve shows a usable fringe.
    pub metrics: Option<FringeMetrics>,
}

impl HomCurve {
    pub fn period(&self) -> Option<f64> {
        self.metrics.map(|m| m.period)
    }

    pub fn visibility(&self) -> Option<f64> {
        self.metrics.map(|m| m.visibility)
    }
}

/// Diagonal sums `G(k) = Σ_{i-j=k} f[i,j]·conj(f[j,i])`, index `k + n - 1`.
fn exchange_overlap(f: &JointAmplitude) -> Result<Vec<Complex64>> {
    let n = f.grid.n_a();
    if !f.grid.is_square() || f.grid.omega_a() != f.grid.omega_b() {
        return Err(Error::InvalidGrid("interference needs identical signal and idler axes".into()));
    }
    f.grid.check_uniform()?;
    let v = &f.values;
    Ok((0..2 * n - 1)
        .into_par_iter()
        .map(|idx| {
            let k = idx as isize - (n as isize - 1);
            let (i0, j0) = if k >= 0 { (k as usize, 0) } else { (0, (-k) as usize) };
            let len = n - i0.max(j0);
            (0..len).map(|m| v[[i0 + m, j0 + m]] * v[[j0 + m, i0 + m]].conj()).sum()
        })
        .collect())
}

/// Coincidence probability on `n_points` delays spanning `center ± range/2`.
pub fn hom_curve_centered(f: &JointAmplitude, center: f64, range: f64, n_points: usize) -> Result<HomCurve> {
    if !f.is_normalized() {
        return Err(Error::Unnormalized(f.norm_sq()));
    }
    if !(range > 0.0) || n_points < 2 {
        return Err(Error::InvalidInput("delay range must be positive with at least two points".into()));
    }
    let n = f.grid.n_a();
    let overlap = exchange_overlap(f)?;
    let total: f64 = f.values.iter().map(|v| v.norm_sqr()).sum();
    let step = f.grid.step_a();
    let delays: Vec<f64> = (0..n_points)
        .map(|p| -0.5 * range + range * p as f64 / (n_points - 1) as f64)
        .collect();
    let probability = delays
        .par_iter()
        .map(|&d| {
            let tau = center + d;
            let s: f64 = overlap
                .iter()
                .enumerate()
                .map(|(idx, g)| {
                    let k = idx as f64 - (n - 1) as f64;
                    (g * Complex64::from_polar(1.0, -k * step * tau)).re
                })
                .sum();
            (0.5 * (1.0 - s / total)).clamp(0.0, 1.0)
        })
        .collect();
    let mut curve = HomCurve { delays, probability, center, metrics: None };
    curve.metrics = fringe_metrics(&curve).ok();
    Ok(curve)
}

/// Coincidence probability on `n_points` delays spanning `±range/2`.
pub fn hom_curve(f: &JointAmplitude, range: f64, n_points: usize) -> Result<HomCurve> {
    hom_curve_centered(f, 0.0, range, n_points)
}

/// Period, visibility and the type of the central extremum.
///
/// A rough period is the dominant nonzero frequency in the spectrum of
/// `|P - ½|`, so a central peak and its neighbouring dips count alike; the
/// search starts past the first minimum after zero frequency. It is then
/// refined from the positions of the two neighbouring features. The central
/// extremum is the value at zero delay compared with the far baseline.
pub fn fringe_metrics(curve: &HomCurve) -> Result<FringeMetrics> {
    let n = curve.delays.len();
    if n < 16 || curve.probability.len() != n {
        return Err(Error::Undersampled(format!("{n} points are too few for a fringe analysis")));
    }
    let dt = (curve.delays[n - 1] - curve.delays[0]) / (n - 1) as f64;
    let deviation: Vec<f64> = curve.probability.iter().map(|p| (p - 0.5).abs()).collect();
    let spread = deviation.iter().cloned().fold(0.0, f64::max) - deviation.iter().cloned().fold(1.0, f64::min);
    if !(spread > 1e-9) {
        return Err(Error::NoFringe("coincidence probability is flat".into()));
    }
    let mean = deviation.iter().sum::<f64>() / n as f64;
    let padded = (16 * n).next_power_of_two();
    let mut buf: Vec<Complex64> = deviation.iter().map(|v| Complex64::new(v - mean, 0.0)).collect();
    buf.resize(padded, Complex64::new(0.0, 0.0));
    FftPlanner::new().plan_fft_forward(padded).process(&mut buf);
    let power: Vec<f64> = buf[..padded / 2].iter().map(|c| c.norm_sqr()).collect();
    let first_min = (1..power.len() - 1)
        .find(|&m| power[m] <= power[m - 1] && power[m] <= power[m + 1])
        .ok_or_else(|| Error::NoFringe("no modulation in the delay spectrum".into()))?;
    let (peak, _) = power[first_min..]
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(k, v)| (k + first_min, *v))
        .ok_or_else(|| Error::NoFringe("no modulation in the delay spectrum".into()))?;
    if peak + 1 >= power.len() || peak == first_min {
        return Err(Error::NoFringe("delay spectrum has no interior maximum".into()));
    }
    let (l, c, r) = (power[peak - 1], power[peak], power[peak + 1]);
    let denom = l - 2.0 * c + r;
    let offset = if denom.abs() > 0.0 { 0.5 * (l - r) / denom } else { 0.0 };
    let freq = (peak as f64 + offset) / (padded as f64 * dt);
    let rough = 1.0 / freq;
    if rough < 8.0 * dt {
        return Err(Error::Undersampled(format!(
            "period {rough:e} s spans fewer than 8 samples of {dt:e} s"
        )));
    }
    if rough > curve.delays[n - 1] - curve.delays[0] {
        return Err(Error::NoFringe("period exceeds the scanned range".into()));
    }

    let zero = curve
        .delays
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
        .map(|(i, _)| i)
        .unwrap_or(0);
    let period = refine_period(&deviation, zero, rough / dt).map_or(rough, |samples| samples * dt);
    let edge = (n / 10).max(1);
    let far = curve.probability[..edge].iter().chain(&curve.probability[n - edge..]).sum::<f64>() / (2 * edge) as f64;
    let central_value = curve.probability[zero];
    if !(far > 0.0) {
        return Err(Error::NoFringe("baseline probability is zero".into()));
    }
    Ok(FringeMetrics {
        period,
        visibility: (far - central_value).abs() / far,
        central: if central_value < far { Extremum::Dip } else { Extremum::Peak },
        central_value,
        far_value: far,
    })
}

/// Half the distance (samples) between the neighbouring features on either
/// side of `zero`, each located as the largest `|P - ½|` within a third of a
/// period of its expected position.
fn refine_period(deviation: &[f64], zero: usize, rough: f64) -> Option<f64> {
    let locate = |sign: f64| -> Option<f64> {
        let target = zero as f64 + sign * rough;
        let lo = (target - rough / 3.0).ceil();
        let hi = (target + rough / 3.0).floor();
        if lo < 1.0 || hi > (deviation.len() - 2) as f64 || hi <= lo {
            return None;
        }
        let (lo, hi) = (lo as usize, hi as usize);
        let best = (lo..=hi).max_by(|&a, &b| deviation[a].total_cmp(&deviation[b]))?;
        if best == lo || best == hi {
            return None;
        }
        let (l, c, r) = (deviation[best - 1], deviation[best], deviation[best + 1]);
        let denom = l - 2.0 * c + r;
        let offset = if denom.abs() > 0.0 { (0.5 * (l - r) / denom).clamp(-0.5, 0.5) } else { 0.0 };
        Some(best as f64 + offset)
    };
    Some(0.5 * (locate(1.0)? - locate(-1.0)?))
}

/// Delay scan wide enough to hold the central feature and both neighbours.
pub fn default_scan_range(separation: f64) -> f64 {
    (3.0 * separation.abs()).max(20e-12)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::TAU;
    use crate::spectral::FrequencyGrid;
    use ndarray::Array2;

    fn symmetric_gaussian(n: usize, sigma: f64) -> JointAmplitude {
        let g = FrequencyGrid::new(TAU * 190e12, TAU * 2e12, n).unwrap();
        let c = g.center();
        let w = g.omega_a().to_vec();
        let vals = Array2::from_shape_fn((n, n), |(i, j)| {
            let (a, b) = (w[i] - c, w[j] - c);
            Complex64::new((-(a * a + b * b) / (2.0 * sigma * sigma)).exp(), 0.0)
        });
        JointAmplitude::new(g, vals).unwrap().normalized().unwrap()
    }

    #[test]
    fn symmetric_state_dips_to_zero() {
        let f = symmetric_gaussian(64, TAU * 200e9);
        let c = hom_curve(&f, 40e-12, 81).unwrap();
        assert!(c.probability[40].abs() < 1e-12);
        assert!((c.probability[0] - 0.5).abs() < 0.005);
        assert!((c.probability[80] - 0.5).abs() < 0.005);
        for i in 0..81 {
            assert!((c.probability[i] - c.probability[80 - i]).abs() < 1e-12);
        }
    }

    #[test]
    fn unnormalized_rejected() {
        let mut f = symmetric_gaussian(32, TAU * 200e9);
        f.values.mapv_inplace(|v| v * 2.0);
        assert!(matches!(hom_curve(&f, 1e-11, 11), Err(Error::Unnormalized(_))));
    }

    #[test]
    fn flat_curve_has_no_fringe() {
        let curve = HomCurve {
            delays: (0..101).map(|i| (i as f64 - 50.0) * 1e-13).collect(),
            probability: vec![0.5; 101],
            center: 0.0,
            metrics: None,
        };
        assert!(matches!(fringe_metrics(&curve), Err(Error::NoFringe(_))));
    }

    #[test]
    fn synthetic_three_dip_period() {
        // dips at -T, 0, +T
        let t = 5e-12;
        let delays: Vec<f64> = (0..801).map(|i| (i as f64 - 400.0) * 0.05e-12).collect();
        let dip = |x: f64| (-(x * x) / (2.0 * (0.8e-12f64).powi(2))).exp();
        let probability = delays.iter().map(|&d| 0.5 - 0.25 * (dip(d - t) + 2.0 * dip(d) + dip(d + t))).collect();
        let curve = HomCurve { delays, probability, center: 0.0, metrics: None };
        let m = fringe_metrics(&curve).unwrap();
        assert!((m.period - t).abs() / t < 0.01, "{}", m.period);
        assert_eq!(m.central, Extremum::Dip);
        assert!((m.visibility - 1.0).abs() < 1e-6);
    }

    #[test]
    fn coarse_sampling_is_rejected() {
        let delays: Vec<f64> = (0..32).map(|i| i as f64 * 1e-12).collect();
        let probability = delays.iter().map(|d| 0.5 + 0.4 * (TAU * d / 3e-12).cos()).collect();
        let curve = HomCurve { delays, probability, center: 0.0, metrics: None };
        assert!(fringe_metrics(&curve).is_err());
    }
}
