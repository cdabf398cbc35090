//! Dimensionality and bin-structure analysis of joint spectra.

use std::f64::consts::TAU;

use nalgebra::DMatrix;
use ndarray::{s, Array2};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectral::{FrequencyGrid, JointAmplitude};

/// Attached to Schmidt results computed from intensity-only data.
pub const FLAT_PHASE_WARNING: &str =
    "amplitude rebuilt from intensity with flat phase; spectral phase was discarded";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchmidtResult {
    /// Normalized Schmidt weights, descending, summing to one.
    pub coefficients: Vec<f64>,
    pub schmidt_number: f64,
    pub purity: f64,
    /// Modes with weight at least `threshold` times the largest weight.
    pub modes_retained: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl SchmidtResult {
    /// Builds the result from raw squared singular values.
    pub fn from_weights(mut weights: Vec<f64>, threshold: f64) -> Result<Self> {
        weights.sort_by(|a, b| b.total_cmp(a));
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) || !total.is_finite() {
            return Err(Error::UndefinedState("amplitude has zero norm".into()));
        }
        let coefficients: Vec<f64> = weights.iter().map(|w| (w / total).max(0.0)).collect();
        let purity: f64 = coefficients.iter().map(|l| l * l).sum();
        let lead = coefficients[0];
        let modes_retained = coefficients.iter().filter(|&&l| l >= threshold * lead).count();
        Ok(Self { coefficients, schmidt_number: 1.0 / purity, purity, modes_retained, warnings: Vec::new() })
    }

    /// Dimension proxy `K²` of the two-photon frequency-binned space.
    pub fn dimension_proxy(&self) -> f64 {
        self.schmidt_number * self.schmidt_number
    }
}

fn to_matrix(values: &Array2<Complex64>) -> Result<DMatrix<Complex64>> {
    let scale = values.iter().map(|v| v.norm()).fold(0.0, f64::max);
    if !scale.is_finite() {
        return Err(Error::InvalidInput("amplitude contains non-finite values".into()));
    }
    if scale == 0.0 {
        return Err(Error::UndefinedState("amplitude is identically zero".into()));
    }
    let (r, c) = values.dim();
    Ok(DMatrix::from_fn(r, c, |i, j| values[[i, j]] / scale))
}

/// Schmidt decomposition of the amplitude matrix by SVD.
pub fn schmidt_decompose(f: &JointAmplitude, threshold: f64) -> Result<SchmidtResult> {
    let m = to_matrix(&f.values)?;
    let singular = m.singular_values();
    let weights: Vec<f64> = singular.iter().map(|s| s * s).collect();
    let mut result = SchmidtResult::from_weights(weights, threshold)?;
    if f.flat_phase {
        result.warnings.push(FLAT_PHASE_WARNING.to_string());
    }
    Ok(result)
}

/// Flat-phase amplitude `√JSI`.
pub fn jsa_from_jsi(jsi: &Array2<f64>, grid: &FrequencyGrid) -> Result<JointAmplitude> {
    if let Some(v) = jsi.iter().find(|v| !(**v >= 0.0) || !v.is_finite()) {
        return Err(Error::InvalidInput(format!("intensity must be finite and non-negative, found {v}")));
    }
    if jsi.iter().all(|v| *v == 0.0) {
        return Err(Error::UndefinedState("intensity is identically zero".into()));
    }
    let mut f = JointAmplitude::new(grid.clone(), jsi.mapv(|v| Complex64::new(v.sqrt(), 0.0)))?;
    f.flat_phase = true;
    Ok(f)
}

/// Row and column sums weighted by the grid step: `m_a(ω_a) = Σ_b JSI·δω_b`.
pub fn marginals(jsi: &Array2<f64>, grid: &FrequencyGrid) -> Result<(Vec<f64>, Vec<f64>)> {
    if jsi.dim() != (grid.n_a(), grid.n_b()) {
        return Err(Error::InvalidGrid("intensity shape does not match grid".into()));
    }
    let (da, db) = (grid.step_a(), grid.step_b());
    let m_a = jsi.rows().into_iter().map(|r| r.sum() * db).collect();
    let m_b = jsi.columns().into_iter().map(|c| c.sum() * da).collect();
    Ok((m_a, m_b))
}

/// Projection of the intensity onto the difference-frequency axis
/// `ν₋ = ν_a - ν_b`, reported against the signal frequency it corresponds to on
/// the pump line, `ν_a = ν_c + ν₋/2` with `ν_c` the grid center.
///
/// Integrating along the sum direction removes the pump envelope, so the
/// profile shows the bin modulation at full contrast regardless of how fine
/// the bins are. Requires a square grid.
pub fn difference_marginal(jsi: &Array2<f64>, grid: &FrequencyGrid) -> Result<(Vec<f64>, Vec<f64>)> {
    if !grid.is_square() {
        return Err(Error::InvalidGrid("difference projection needs a square grid".into()));
    }
    let n = grid.n_a();
    if jsi.dim() != (n, n) {
        return Err(Error::InvalidGrid("intensity shape does not match grid".into()));
    }
    let step = grid.step_a();
    let mut profile = vec![0.0; 2 * n - 1];
    for ((i, j), v) in jsi.indexed_iter() {
        profile[i + n - 1 - j] += v * step;
    }
    let center_hz = grid.center() / TAU;
    let step_hz = step / TAU;
    let axis = (0..2 * n - 1)
        .map(|k| center_hz + 0.5 * (k as f64 - (n - 1) as f64) * step_hz)
        .collect();
    Ok((axis, profile))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinReport {
    pub centers_hz: Vec<f64>,
    /// Median spacing of successive centers; absent for a single peak.
    pub spacing_hz: Option<f64>,
    pub fwhm_hz: Vec<f64>,
    pub count: usize,
    pub single_peak: bool,
    pub threshold_db: f64,
    /// Modulation period estimated from the autocorrelation (samples).
    pub period_samples: Option<f64>,
    /// Moving-average window of the envelope (samples).
    pub envelope_window: usize,
    #[serde(skip)]
    pub envelope: Vec<f64>,
}

impl BinReport {
    pub fn mean_spacing_hz(&self) -> Option<f64> {
        self.spacing_hz
    }
}

/// Centered moving average with a window that shrinks at the edges.
fn moving_average(x: &[f64], window: usize) -> Vec<f64> {
    let half = window / 2;
    let mut prefix = Vec::with_capacity(x.len() + 1);
    prefix.push(0.0);
    for v in x {
        prefix.push(prefix[prefix.len() - 1] + v);
    }
    (0..x.len())
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(x.len());
            (prefix[hi] - prefix[lo]) / (hi - lo) as f64
        })
        .collect()
}

fn odd_window(w: f64) -> usize {
    let w = w.round().max(1.0) as usize;
    if w.is_multiple_of(2) {
        w + 1
    } else {
        w
    }
}

/// Period (samples) of the modulation from the first ripple of the
/// autocorrelation, or `None` when no ripple exists.
fn modulation_period(x: &[f64]) -> Option<f64> {
    let n = x.len();
    if n < 8 {
        return None;
    }
    let mean = x.iter().sum::<f64>() / n as f64;
    let d: Vec<f64> = x.iter().map(|v| v - mean).collect();
    let max_lag = n / 2;
    let acf: Vec<f64> = (0..=max_lag)
        .map(|l| d[..n - l].iter().zip(&d[l..]).map(|(a, b)| a * b).sum())
        .collect();
    if !(acf[0] > 0.0) {
        return None;
    }
    let first_min = (1..max_lag).find(|&l| acf[l - 1] > acf[l] && acf[l] <= acf[l + 1])?;
    let top = acf[first_min..max_lag].iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    // first local maximum near the top; with non-integer periods a multiple can edge out the fundamental
    let peak = (first_min + 1..max_lag - 1)
        .find(|&l| acf[l] >= acf[l - 1] && acf[l] >= acf[l + 1] && acf[l] - acf[first_min] >= 0.8 * (top - acf[first_min]))
        .unwrap_or(max_lag - 1);
    let peak_val = acf[peak];
    if peak <= first_min || peak >= max_lag - 1 || peak < 2 {
        return None;
    }
    // reject ripples that are pure noise
    if peak_val - acf[first_min] < 1e-6 * acf[0] {
        return None;
    }
    Some(peak as f64 + parabolic_offset(acf[peak - 1], acf[peak], acf[peak + 1]))
}

fn parabolic_offset(left: f64, mid: f64, right: f64) -> f64 {
    let denom = left - 2.0 * mid + right;
    if denom.abs() < f64::MIN_POSITIVE || !denom.is_finite() {
        0.0
    } else {
        (0.5 * (left - right) / denom).clamp(-0.5, 0.5)
    }
}

/// Linear interpolation of the axis at a fractional index.
fn axis_at(axis: &[f64], pos: f64) -> f64 {
    let pos = pos.clamp(0.0, (axis.len() - 1) as f64);
    let i = (pos.floor() as usize).min(axis.len() - 2);
    let frac = pos - i as f64;
    axis[i] + frac * (axis[i + 1] - axis[i])
}

/// Local maxima of `x`; plateaus collapse to their centroid.
fn local_maxima(x: &[f64]) -> Vec<f64> {
    let mut out = Vec::new();
    let n = x.len();
    let mut i = 1;
    while i + 1 < n {
        if x[i] > x[i - 1] {
            let mut j = i;
            while j + 1 < n && x[j + 1] == x[i] {
                j += 1;
            }
            if j + 1 < n && x[j + 1] < x[i] {
                out.push(0.5 * (i + j) as f64);
            }
            i = j + 1;
        } else {
            i += 1;
        }
    }
    out
}

fn crossing(x: &[f64], from: usize, level: f64, step: isize, limit: usize) -> Option<f64> {
    let mut i = from as isize;
    let mut travelled = 0;
    while travelled < limit {
        let next = i + step;
        if next < 0 || next as usize >= x.len() {
            return None;
        }
        let (a, b) = (x[i as usize], x[next as usize]);
        if b <= level && a > level {
            let frac = (a - level) / (a - b);
            return Some(i as f64 + step as f64 * frac);
        }
        i = next;
        travelled += 1;
    }
    None
}

fn single_peak_report(x: &[f64], axis: &[f64], threshold_db: f64) -> Result<BinReport> {
    let max = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !(max > 0.0) {
        return Err(Error::NoPeaks { threshold_db });
    }
    let idx: Vec<usize> = (0..x.len()).filter(|&i| x[i] == max).collect();
    let center = 0.5 * (idx[0] + idx[idx.len() - 1]) as f64;
    let half = 0.5 * max;
    let left = crossing(x, idx[0], half, -1, x.len());
    let right = crossing(x, idx[idx.len() - 1], half, 1, x.len());
    let fwhm = match (left, right) {
        (Some(l), Some(r)) => (axis_at(axis, r) - axis_at(axis, l)).abs(),
        _ => f64::NAN,
    };
    Ok(BinReport {
        centers_hz: vec![axis_at(axis, center)],
        spacing_hz: None,
        fwhm_hz: vec![fwhm],
        count: 1,
        single_peak: true,
        threshold_db,
        period_samples: None,
        envelope_window: x.len(),
        envelope: vec![max; x.len()],
    })
}

/// Finds modulation peaks in a marginal spectrum.
///
/// The modulation period is estimated from the autocorrelation; the envelope
/// is the moving average over three periods. Peaks are local maxima of the
/// lightly smoothed profile that rise above the envelope and sit where the
/// envelope is within `threshold_db` of its maximum. The spacing is the comb
/// frequency that maximizes the profile's Fourier magnitude near the rough
/// period; each detected peak is then placed on the nearest tooth of that
/// comb, which removes the pull of a curved envelope on sparse peaks. Widths
/// are full widths at half prominence.
pub fn detect_bins(marginal: &[f64], axis_hz: &[f64], threshold_db: f64) -> Result<BinReport> {
    let n = marginal.len();
    if n != axis_hz.len() || n < 3 {
        return Err(Error::InvalidInput("marginal and axis lengths differ or are too short".into()));
    }
    if marginal.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
        return Err(Error::InvalidInput("marginal must be finite and non-negative".into()));
    }
    if axis_hz.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidInput("axis must be strictly increasing".into()));
    }
    let threshold_db = -threshold_db.abs();
    let Some(period) = modulation_period(marginal) else {
        return single_peak_report(marginal, axis_hz, threshold_db);
    };
    let env_window = odd_window(3.0 * period);
    let envelope = moving_average(marginal, env_window);
    let smooth = moving_average(marginal, odd_window(0.25 * period));
    let env_max = envelope.iter().cloned().fold(0.0, f64::max);
    let floor = env_max * 10f64.powf(threshold_db / 10.0);

    let mut candidates: Vec<f64> = local_maxima(&smooth)
        .into_iter()
        .filter(|&p| {
            let i = p.round() as usize;
            smooth[i] >= envelope[i] && envelope[i] >= floor
        })
        .collect();
    // enforce half-period separation, tallest first
    candidates.sort_by(|a, b| smooth[b.round() as usize].total_cmp(&smooth[a.round() as usize]));
    let mut peaks: Vec<f64> = Vec::new();
    for c in candidates {
        if peaks.iter().all(|p| (p - c).abs() >= 0.5 * period) {
            peaks.push(c);
        }
    }
    peaks.sort_by(f64::total_cmp);
    if peaks.is_empty() {
        return Err(Error::NoPeaks { threshold_db });
    }

    let ratio: Vec<f64> = smooth
        .iter()
        .zip(&envelope)
        .map(|(s, e)| if *e > 0.0 { s / e } else { 0.0 })
        .collect();
    let reach = (0.75 * period).ceil() as usize;
    let mut centers = Vec::with_capacity(peaks.len());
    let mut widths = Vec::with_capacity(peaks.len());
    for &p in &peaks {
        let i = p.round() as usize;
        let pos = if p.fract() == 0.0 && i > 0 && i + 1 < n {
            p + parabolic_offset(ratio[i - 1], ratio[i], ratio[i + 1])
        } else {
            p
        };
        centers.push(axis_at(axis_hz, pos));

        let lo = i.saturating_sub(reach);
        let hi = (i + reach).min(n - 1);
        let left_min = smooth[lo..=i].iter().cloned().fold(f64::INFINITY, f64::min);
        let right_min = smooth[i..=hi].iter().cloned().fold(f64::INFINITY, f64::min);
        let level = 0.5 * (smooth[i] + 0.5 * (left_min + right_min));
        let width = match (crossing(&smooth, i, level, -1, reach), crossing(&smooth, i, level, 1, reach)) {
            (Some(l), Some(r)) => axis_at(axis_hz, r) - axis_at(axis_hz, l),
            _ => f64::NAN,
        };
        widths.push(width);
    }
    let mut spacing = median_difference(&centers);
    if centers.len() >= 2 {
        let step = median_difference(axis_hz).unwrap_or(1.0);
        if let Some((freq, anchor)) = comb_fit(marginal, axis_hz, 1.0 / (period * step)) {
            let tooth = |x: f64| anchor + ((x - anchor) * freq).round() / freq;
            centers.iter_mut().for_each(|c| *c = tooth(*c));
            spacing = Some(1.0 / freq);
        }
    }
    let count = centers.len();
    Ok(BinReport {
        centers_hz: centers,
        spacing_hz: spacing,
        fwhm_hz: widths,
        count,
        single_peak: count == 1,
        threshold_db,
        period_samples: Some(period),
        envelope_window: env_window,
        envelope,
    })
}

/// Comb frequency maximizing the Fourier magnitude of the profile within
/// ±15 % of `rough`, and the axis position of one comb tooth.
fn comb_fit(profile: &[f64], axis: &[f64], rough: f64) -> Option<(f64, f64)> {
    let n = profile.len();
    let weights: Vec<f64> = (0..n)
        .map(|i| {
            let lo = if i == 0 { axis[0] } else { 0.5 * (axis[i - 1] + axis[i]) };
            let hi = if i + 1 == n { axis[i] } else { 0.5 * (axis[i] + axis[i + 1]) };
            (hi - lo) * profile[i]
        })
        .collect();
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) || !(rough > 0.0) {
        return None;
    }
    let reference = 0.5 * (axis[0] + axis[n - 1]);
    let component = |f: f64| -> Complex64 {
        (0..n).map(|i| Complex64::from_polar(weights[i], -TAU * f * (axis[i] - reference))).sum()
    };
    let steps = 600;
    let (lo, hi) = (0.85 * rough, 1.15 * rough);
    let freqs: Vec<f64> = (0..=steps).map(|k| lo + (hi - lo) * k as f64 / steps as f64).collect();
    let power: Vec<f64> = freqs.iter().map(|&f| component(f).norm_sqr()).collect();
    let best = (0..=steps).max_by(|&a, &b| power[a].total_cmp(&power[b]))?;
    if best == 0 || best == steps {
        return None;
    }
    let df = freqs[1] - freqs[0];
    let freq = freqs[best] + df * parabolic_offset(power[best - 1], power[best], power[best + 1]);
    let phase = component(freq).arg();
    Some((freq, reference - phase / (TAU * freq)))
}

fn median_difference(x: &[f64]) -> Option<f64> {
    if x.len() < 2 {
        return None;
    }
    let mut d: Vec<f64> = x.windows(2).map(|w| w[1] - w[0]).collect();
    d.sort_by(f64::total_cmp);
    let m = d.len();
    Some(if m % 2 == 1 { d[m / 2] } else { 0.5 * (d[m / 2 - 1] + d[m / 2]) })
}

/// Square crop of the intensity around `(center, ν_p - center)` returned as a
/// flat-phase amplitude. The grid center is taken as the degenerate frequency,
/// so the pump line is `ν_a + ν_b = 2·ν_c`.
pub fn extract_bin(
    jsi: &Array2<f64>,
    grid: &FrequencyGrid,
    center_hz: f64,
    window_hz: f64,
) -> Result<JointAmplitude> {
    if !(window_hz > 0.0) {
        return Err(Error::InvalidInput("window must be positive".into()));
    }
    if jsi.dim() != (grid.n_a(), grid.n_b()) {
        return Err(Error::InvalidGrid("intensity shape does not match grid".into()));
    }
    let partner_hz = 2.0 * grid.center() / TAU - center_hz;
    let half = 0.5 * window_hz;
    let range = |axis: &[f64], c: f64| -> Result<(usize, usize)> {
        let hz: Vec<f64> = axis.iter().map(|w| w / TAU).collect();
        if c - half < hz[0] || c + half > hz[hz.len() - 1] {
            return Err(Error::InvalidInput(format!(
                "window {window_hz:e} Hz around {c:e} Hz does not fit inside the grid"
            )));
        }
        let lo = hz.partition_point(|v| *v < c - half);
        let hi = hz.partition_point(|v| *v <= c + half);
        if hi <= lo + 1 {
            return Err(Error::InvalidInput("window holds fewer than two grid points".into()));
        }
        Ok((lo, hi))
    };
    let (a0, a1) = range(grid.omega_a(), center_hz)?;
    let (b0, b1) = range(grid.omega_b(), partner_hz)?;
    let crop = jsi.slice(s![a0..a1, b0..b1]).to_owned();
    let sub = FrequencyGrid::from_axes(
        grid.omega_a()[a0..a1].to_vec(),
        grid.omega_b()[b0..b1].to_vec(),
        grid.center(),
    )?;
    jsa_from_jsi(&crop, &sub)
}

/// Modulation contrast at a known period, expressed as valley/peak.
///
/// Uses the Fourier component of the profile at `1/period` relative to its
/// mean (a lock-in estimate), so noise and a slowly varying envelope do not
/// register as modulation. Returns 1 for no modulation and 0 for full
/// contrast.
pub fn valley_to_peak(profile: &[f64], axis: &[f64], period: f64) -> Result<f64> {
    if profile.len() != axis.len() || profile.len() < 3 {
        return Err(Error::InvalidInput("profile and axis lengths differ".into()));
    }
    if !(period > 0.0) {
        return Err(Error::InvalidInput("period must be positive".into()));
    }
    let mut total = 0.0;
    let mut comp = Complex64::new(0.0, 0.0);
    for i in 0..profile.len() {
        let lo = if i == 0 { axis[0] } else { 0.5 * (axis[i - 1] + axis[i]) };
        let hi = if i + 1 == axis.len() { axis[i] } else { 0.5 * (axis[i] + axis[i + 1]) };
        let w = (hi - lo).abs() * profile[i];
        total += w;
        comp += Complex64::from_polar(w, -TAU * axis[i] / period);
    }
    if !(total > 0.0) {
        return Err(Error::Empty("profile has no weight".into()));
    }
    let visibility = (2.0 * comp.norm() / total).min(1.0);
    Ok((1.0 - visibility) / (1.0 + visibility))
}
