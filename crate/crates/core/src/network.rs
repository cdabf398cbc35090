//! Two-node distribution: a local node resolves its photon through a
//! dispersive module, a remote node detects the partner after a fiber link, and
//! the two time-taggers share an imperfect clock.

use std::f64::consts::TAU;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::analysis::{detect_bins, BinReport};
use crate::detection::{
    apply_detector, idler_photons, match_pairs, sample_pair_events, signal_photons, stream_rng, time_to_freq,
    Channel, DetectorSpec, DispersionSpec, EventRecord, PairSource, Photon,
};
use crate::error::{Error, Result};
use crate::spectral::SPEED_OF_LIGHT;

/// Default synchronization precision between nodes (s, RMS).
pub const SYNC_JITTER: f64 = 28e-12;
pub const HISTOGRAM_BIN_WIDTH: f64 = 30e-12;
pub const LINK_LENGTH: f64 = 1300.0;
pub const FIBER_INDEX: f64 = 1.468;
/// Standard single-mode fiber, 17 ps/nm/km in s per m of wavelength per m.
pub const FIBER_DISPERSION: f64 = 17e-12 / 1e-9 / 1e3;
/// Wavelength at which the link group delay equals `length·n/c`.
pub const FIBER_REFERENCE_WAVELENGTH: f64 = 1550e-9;
/// Default coincidence window across the nodes (s); wide enough for the
/// dispersed spread of the local photon.
pub const NETWORK_WINDOW: f64 = 12e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClockModel {
    pub offset: f64,
    pub drift: f64,
    /// White Gaussian jitter per timestamp (s, RMS).
    pub jitter: f64,
    /// Random-walk noise, RMS seconds per √second; zero disables it.
    pub random_walk: f64,
    /// Whether folding uses the shared pulse-train reference.
    pub referenced: bool,
}

impl Default for ClockModel {
    fn default() -> Self {
        Self { offset: 0.0, drift: 0.0, jitter: SYNC_JITTER, random_walk: 0.0, referenced: true }
    }
}

impl ClockModel {
    pub fn ideal() -> Self {
        Self { jitter: 0.0, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.jitter >= 0.0) || !(self.random_walk >= 0.0) {
            return Err(Error::InvalidInput("clock jitter must be non-negative".into()));
        }
        if !self.offset.is_finite() || !self.drift.is_finite() {
            return Err(Error::InvalidInput("clock offset and drift must be finite".into()));
        }
        Ok(())
    }

    /// Maps true times (sorted) into this clock: `t(1+drift) + offset + noise`.
    pub fn apply(&self, events: &mut Vec<EventRecord>, rng: &mut ChaCha8Rng) -> Result<()> {
        self.validate()?;
        let white = Normal::new(0.0, self.jitter).map_err(|e| Error::InvalidInput(e.to_string()))?;
        let mut walk = 0.0;
        let mut last = 0.0;
        for e in events.iter_mut() {
            if self.random_walk > 0.0 {
                let dt = (e.time - last).max(0.0);
                walk += self.random_walk * dt.sqrt() * rng.sample::<f64, _>(rand_distr::StandardNormal);
                last = e.time;
            }
            let noise = if self.jitter > 0.0 { white.sample(rng) } else { 0.0 };
            e.time = e.time * (1.0 + self.drift) + self.offset + walk + noise;
        }
        events.retain(|e| e.time >= 0.0);
        events.sort_by(|a, b| a.time.total_cmp(&b.time));
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FiberLink {
    pub length: f64,
    pub index: f64,
    /// s per m of wavelength per m of fiber.
    pub dispersion: f64,
    pub loss_db: f64,
}

impl Default for FiberLink {
    fn default() -> Self {
        Self { length: LINK_LENGTH, index: FIBER_INDEX, dispersion: FIBER_DISPERSION, loss_db: 0.0 }
    }
}

impl FiberLink {
    pub fn none() -> Self {
        Self { length: 0.0, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.length >= 0.0) || !(self.index > 0.0) || !(self.loss_db >= 0.0) || !self.dispersion.is_finite() {
            return Err(Error::InvalidInput("fiber length, index and loss must be physical".into()));
        }
        Ok(())
    }

    pub fn propagation_delay(&self) -> f64 {
        self.length * self.index / SPEED_OF_LIGHT
    }

    pub fn transmission(&self) -> f64 {
        10f64.powf(-self.loss_db / 10.0)
    }

    /// Group delay at angular frequency `omega`.
    pub fn delay(&self, omega: f64) -> f64 {
        let lambda = TAU * SPEED_OF_LIGHT / omega;
        self.propagation_delay() + self.dispersion * self.length * (lambda - FIBER_REFERENCE_WAVELENGTH)
    }

    /// Arrival spread per unit of wavelength (s/m).
    pub fn spread_per_wavelength(&self) -> f64 {
        (self.dispersion * self.length).abs()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TwoNodeEvents {
    /// Node 0: dispersed signal photons.
    pub local: Vec<EventRecord>,
    /// Node 1: idler photons after the link.
    pub remote: Vec<EventRecord>,
    pub pairs: usize,
}

/// Generates both nodes' event streams.
///
/// The pair draws, the two detectors and the two clocks each use their own
/// sub-stream of `seed`, so the result does not depend on evaluation order.
#[allow(clippy::too_many_arguments)]
pub fn simulate_two_node(
    src: &PairSource,
    local_det: &DetectorSpec,
    local_disp: &DispersionSpec,
    remote_det: &DetectorSpec,
    link: &FiberLink,
    clocks: (&ClockModel, &ClockModel),
    duration: f64,
    seed: u64,
) -> Result<TwoNodeEvents> {
    link.validate()?;
    let pairs = sample_pair_events(src, duration, &mut stream_rng(seed, 0))?;
    let remote_det = DetectorSpec { efficiency: remote_det.efficiency * link.transmission(), ..*remote_det };
    let remote_photons: Vec<Photon> = idler_photons(&pairs)
        .into_iter()
        .map(|p| Photon { time: p.time + link.delay(p.omega), omega: p.omega })
        .collect();
    let (local, remote) = rayon::join(
        || -> Result<Vec<EventRecord>> {
            let mut ev = apply_detector(
                &signal_photons(&pairs),
                local_det,
                Some(local_disp),
                duration,
                0,
                Channel::Signal,
                &mut stream_rng(seed, 1),
            )?;
            clocks.0.apply(&mut ev, &mut stream_rng(seed, 3))?;
            Ok(ev)
        },
        || -> Result<Vec<EventRecord>> {
            let mut ev = apply_detector(
                &remote_photons,
                &remote_det,
                None,
                duration + link.propagation_delay(),
                1,
                Channel::Idler,
                &mut stream_rng(seed, 2),
            )?;
            clocks.1.apply(&mut ev, &mut stream_rng(seed, 4))?;
            Ok(ev)
        },
    );
    Ok(TwoNodeEvents { local: local?, remote: remote?, pairs: pairs.len() })
}

/// Gross delay of the remote stream relative to the local one from the peak of
/// their cross-correlation.
///
/// Differences `t_r - t_l` within `±max_delay` are histogrammed in 1 ns bins
/// over the first `max_events` local events; the estimate is the centroid of
/// the differences within 3 ns of the tallest bin.
pub fn estimate_gross_delay(local: &[f64], remote: &[f64], max_delay: f64, max_events: usize) -> Result<f64> {
    if local.is_empty() || remote.is_empty() {
        return Err(Error::Empty("cannot calibrate delay without events on both nodes".into()));
    }
    let coarse = 1e-9;
    let bins = (2.0 * max_delay / coarse).ceil() as usize + 1;
    let mut hist = vec![0u32; bins];
    let mut diffs = Vec::new();
    let mut start = 0;
    for &tl in local.iter().take(max_events) {
        while start < remote.len() && remote[start] < tl - max_delay {
            start += 1;
        }
        for &tr in remote[start..].iter().take_while(|&&tr| tr <= tl + max_delay) {
            let d = tr - tl;
            hist[((d + max_delay) / coarse) as usize] += 1;
            diffs.push(d);
        }
    }
    let (peak, &height) = hist.iter().enumerate().max_by_key(|(_, c)| **c).expect("non-empty histogram");
    if height == 0 {
        return Err(Error::Empty("no events within the delay search range".into()));
    }
    let guess = peak as f64 * coarse - max_delay + 0.5 * coarse;
    let near: Vec<f64> = diffs.into_iter().filter(|d| (d - guess).abs() <= 3e-9).collect();
    Ok(near.iter().sum::<f64>() / near.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FoldParams {
    pub repetition_rate: f64,
    pub bin_width: f64,
    /// Full coincidence window across the nodes (s).
    pub window: f64,
    /// Fixed remote-minus-local delay; estimated when absent.
    pub gross_delay: Option<f64>,
    /// Fold the local timestamp on the shared pulse train; otherwise fold
    /// the local-remote time difference.
    pub referenced: bool,
    /// Time after the pulse (referenced) or after the remote detection
    /// (unreferenced) at which the histogram starts.
    pub origin: f64,
}

impl FoldParams {
    pub fn new(repetition_rate: f64, origin: f64) -> Self {
        Self {
            repetition_rate,
            bin_width: HISTOGRAM_BIN_WIDTH,
            window: NETWORK_WINDOW,
            gross_delay: None,
            referenced: true,
            origin,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldedHistogram {
    pub bin_width: f64,
    pub period: f64,
    /// Time of the start of bin 0 relative to the fold reference (s).
    pub origin: f64,
    pub counts: Vec<u64>,
    pub gross_delay: f64,
    pub coincidences: usize,
    pub referenced: bool,
}

impl FoldedHistogram {
    pub fn bin_start(&self, i: usize) -> f64 {
        self.origin + i as f64 * self.bin_width
    }

    pub fn bin_center(&self, i: usize) -> f64 {
        self.bin_start(i) + 0.5 * self.bin_width
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

/// Coincidences across the nodes folded into one pulse period.
///
/// Referenced folding accumulates the local photon's arrival modulo the pulse
/// period, so the histogram is the local photon's spectrum conditioned on a
/// remote detection. Unreferenced folding has no shared pulse phase and uses
/// the local-remote arrival difference instead.
pub fn fold_and_histogram(local: &[EventRecord], remote: &[EventRecord], params: &FoldParams) -> Result<FoldedHistogram> {
    if !(params.repetition_rate > 0.0) {
        return Err(Error::InvalidInput("repetition rate must be positive".into()));
    }
    if !(params.bin_width > 0.0) || !(params.window > 0.0) {
        return Err(Error::InvalidInput("bin width and window must be positive".into()));
    }
    let period = 1.0 / params.repetition_rate;
    let tl: Vec<f64> = local.iter().filter(|e| e.channel != Channel::Sync).map(|e| e.time).collect();
    let tr_raw: Vec<f64> = remote.iter().filter(|e| e.channel != Channel::Sync).map(|e| e.time).collect();
    if tl.windows(2).any(|w| w[1] < w[0]) || tr_raw.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::InvalidInput("event streams must be sorted".into()));
    }
    let delay = match params.gross_delay {
        Some(d) => d,
        None => estimate_gross_delay(&tl, &tr_raw, 100e-6, 20_000)?,
    };
    let tr: Vec<f64> = tr_raw.iter().map(|t| t - delay).collect();
    let pairs = match_pairs(&tl, &tr, params.window);
    let n_bins = (period / params.bin_width).round().max(1.0) as usize;
    let mut counts = vec![0u64; n_bins];
    for &(a, b) in &pairs {
        let x = if params.referenced { a } else { a - b };
        let rel = (x - params.origin).rem_euclid(period);
        let k = ((rel / params.bin_width) as usize).min(n_bins - 1);
        counts[k] += 1;
    }
    Ok(FoldedHistogram {
        bin_width: params.bin_width,
        period,
        origin: params.origin,
        counts,
        gross_delay: delay,
        coincidences: pairs.len(),
        referenced: params.referenced,
    })
}

/// Frequency profile of a folded histogram: `(ν in Hz ascending, counts)`.
/// Bins whose time maps outside the dispersion band are dropped.
pub fn histogram_spectrum(h: &FoldedHistogram, disp: &DispersionSpec) -> (Vec<f64>, Vec<f64>) {
    let mut pts: Vec<(f64, f64)> = (0..h.counts.len())
        .filter_map(|i| {
            let t = h.bin_center(i);
            let t = if t >= h.origin + h.period { t - h.period } else { t };
            time_to_freq(disp, t).ok().map(|w| (w / TAU, h.counts[i] as f64))
        })
        .collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    pts.into_iter().unzip()
}

/// Bin structure of a referenced histogram, on a frequency axis.
pub fn resolve_report(h: &FoldedHistogram, disp: &DispersionSpec) -> Result<BinReport> {
    if h.total() == 0 {
        return Err(Error::Empty("histogram has no counts".into()));
    }
    let (axis, profile) = histogram_spectrum(h, disp);
    if axis.len() < 3 {
        return Err(Error::Empty("histogram does not overlap the dispersion band".into()));
    }
    detect_bins(&profile, &axis, -10.0)
}

/// Number of grid bin centers `ν_0 + m·Δν` at which `envelope` is within
/// `threshold_db` of its maximum.
pub fn configured_bin_count(envelope: &[f64], axis_hz: &[f64], center_hz: f64, spacing_hz: f64, threshold_db: f64) -> usize {
    if envelope.len() != axis_hz.len() || envelope.len() < 2 || !(spacing_hz > 0.0) {
        return 0;
    }
    let max = envelope.iter().cloned().fold(0.0, f64::max);
    let floor = max * 10f64.powf(-threshold_db.abs() / 10.0);
    let at = |x: f64| -> Option<f64> {
        let k = axis_hz.partition_point(|v| *v < x);
        if k == 0 || k >= axis_hz.len() {
            return None;
        }
        let f = (x - axis_hz[k - 1]) / (axis_hz[k] - axis_hz[k - 1]);
        Some(envelope[k - 1] + f * (envelope[k] - envelope[k - 1]))
    };
    let reach = ((axis_hz[axis_hz.len() - 1] - axis_hz[0]) / spacing_hz).ceil() as i64;
    (-reach..=reach).filter(|m| at(center_hz + *m as f64 * spacing_hz).is_some_and(|v| v >= floor)).count()
}
