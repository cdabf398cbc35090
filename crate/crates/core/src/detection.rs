//! Monte-Carlo photon-pair events, detector model, coincidence counting and the
//! dispersive time-of-flight spectrometer.

use std::f64::consts::TAU;
use std::io::{BufRead, Read, Write};

use ndarray::Array2;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectral::{FrequencyGrid, SPEED_OF_LIGHT};
use crate::synthesis::REPETITION_RATE;

/// Ratio of a Gaussian's FWHM to its standard deviation.
pub const FWHM_PER_SIGMA: f64 = 2.354_820_045_030_949;

/// Detector jitter quoted for the superconducting detectors (FWHM, s).
pub const DETECTOR_JITTER_FWHM: f64 = 80e-12;
/// Total system jitter of the spectrometer (FWHM, s).
pub const SYSTEM_JITTER_FWHM: f64 = 130e-12;
/// Measured pair generation rate per pump power (pairs/s/mW) and pump power (mW).
pub const PAIR_RATE_PER_MW: f64 = 587.0;
pub const PUMP_POWER_MW: f64 = 341.0;
/// Coincidence window used for counting (s).
pub const COINCIDENCE_WINDOW: f64 = 3e-9;
/// Band around the reference wavelength where the linear delay model holds (m).
pub const DISPERSION_BAND: f64 = 50e-9;

/// Independent generator for sub-stream `stream` of a master seed.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Root-sum-square of independent Gaussian widths.
pub fn rss(widths: &[f64]) -> f64 {
    widths.iter().map(|w| w * w).sum::<f64>().sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorSpec {
    pub efficiency: f64,
    /// Gaussian RMS timing jitter (s).
    pub jitter: f64,
    /// Dark counts per second.
    pub dark_rate: f64,
    pub dead_time: f64,
}

impl DetectorSpec {
    pub fn new(efficiency: f64, jitter: f64, dark_rate: f64, dead_time: f64) -> Result<Self> {
        let d = Self { efficiency, jitter, dark_rate, dead_time };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.efficiency) {
            return Err(Error::InvalidInput(format!("efficiency {} outside [0, 1]", self.efficiency)));
        }
        if !(self.jitter >= 0.0) || !(self.dark_rate >= 0.0) || !(self.dead_time >= 0.0) {
            return Err(Error::InvalidInput("jitter, dark rate and dead time must be non-negative".into()));
        }
        Ok(())
    }

    /// Perfect detector: unit efficiency, no jitter, no darks.
    pub fn ideal() -> Self {
        Self { efficiency: 1.0, jitter: 0.0, dark_rate: 0.0, dead_time: 0.0 }
    }

    /// Superconducting detector: 70 % efficiency, 80 ps FWHM jitter, 100 darks/s.
    pub fn snspd() -> Self {
        Self { efficiency: 0.7, jitter: DETECTOR_JITTER_FWHM / FWHM_PER_SIGMA, dark_rate: 100.0, dead_time: 0.0 }
    }

    /// Same detector with the 130 ps FWHM total system jitter.
    pub fn snspd_system() -> Self {
        Self { jitter: SYSTEM_JITTER_FWHM / FWHM_PER_SIGMA, ..Self::snspd() }
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "ideal" => Some(Self::ideal()),
            "snspd" => Some(Self::snspd()),
            "snspd-system" => Some(Self::snspd_system()),
            _ => None,
        }
    }

    pub fn jitter_fwhm(&self) -> f64 {
        self.jitter * FWHM_PER_SIGMA
    }
}

/// Linear-in-wavelength group delay `t = base + D·(λ - λ_ref)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DispersionSpec {
    /// Dispersion (s per m of wavelength); -895 ps/nm is -0.895.
    pub dispersion: f64,
    pub lambda_ref: f64,
    pub base_delay: f64,
}

impl DispersionSpec {
    pub fn new(dispersion: f64, lambda_ref: f64, base_delay: f64) -> Result<Self> {
        let d = Self { dispersion, lambda_ref, base_delay };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dispersion == 0.0 || !self.dispersion.is_finite() {
            return Err(Error::InvalidInput("dispersion must be nonzero and finite".into()));
        }
        if !(self.lambda_ref > 0.0) || !self.base_delay.is_finite() {
            return Err(Error::InvalidInput("reference wavelength must be positive".into()));
        }
        Ok(())
    }

    /// Module compensating 50 km of fiber: -895 ps/nm at 1565 nm.
    pub fn dcf_50km() -> Self {
        Self { dispersion: -0.895, lambda_ref: 1565e-9, base_delay: 0.0 }
    }

    /// Module compensating 15 km of fiber, scaled from the 50 km one.
    pub fn dcf_15km() -> Self {
        Self { dispersion: -0.895 * 15.0 / 50.0, ..Self::dcf_50km() }
    }

    /// Higher-dispersion module with three times the 50 km value.
    pub fn dcf_high() -> Self {
        Self { dispersion: -0.895 * 3.0, ..Self::dcf_50km() }
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "dcf-50km" => Some(Self::dcf_50km()),
            "dcf-15km" => Some(Self::dcf_15km()),
            "dcf-high" => Some(Self::dcf_high()),
            _ => None,
        }
    }

    /// Wavelength resolution (m) for a timing jitter (same width measure).
    pub fn resolution(&self, jitter: f64) -> f64 {
        jitter / self.dispersion.abs()
    }

    fn check_band(&self, lambda: f64) -> Result<()> {
        if !((lambda - self.lambda_ref).abs() <= DISPERSION_BAND) {
            return Err(Error::OutOfRange(format!(
                "wavelength {lambda:e} m outside {:e} ± {DISPERSION_BAND:e} m",
                self.lambda_ref
            )));
        }
        Ok(())
    }
}

/// Arrival delay of angular frequency `omega` after the dispersive element.
pub fn freq_to_time(d: &DispersionSpec, omega: f64) -> Result<f64> {
    let lambda = TAU * SPEED_OF_LIGHT / omega;
    d.check_band(lambda)?;
    Ok(d.base_delay + d.dispersion * (lambda - d.lambda_ref))
}

/// Inverse of [`freq_to_time`].
pub fn time_to_freq(d: &DispersionSpec, t: f64) -> Result<f64> {
    let lambda = d.lambda_ref + (t - d.base_delay) / d.dispersion;
    d.check_band(lambda)?;
    Ok(TAU * SPEED_OF_LIGHT / lambda)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
#[repr(u8)]
pub enum Channel {
    Signal = 0,
    Idler = 1,
    Sync = 2,
}

impl Channel {
    pub fn from_u8(v: u8) -> Result<Self> {
        match v {
            0 => Ok(Channel::Signal),
            1 => Ok(Channel::Idler),
            2 => Ok(Channel::Sync),
            _ => Err(Error::InvalidInput(format!("unknown channel code {v}"))),
        }
    }

    fn name(self) -> &'static str {
        match self {
            Channel::Signal => "signal",
            Channel::Idler => "idler",
            Channel::Sync => "sync",
        }
    }
}

/// One time-tag in a node's local clock.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub node: u8,
    pub channel: Channel,
    /// Seconds.
    pub time: f64,
}

/// Normalized pair-probability table on a grid plus emission rates.
#[derive(Debug, Clone)]
pub struct PairSource {
    pub grid: FrequencyGrid,
    /// Sums to one.
    pub table: Array2<f64>,
    pub pair_rate: f64,
    pub repetition_rate: f64,
    cdf: Vec<f64>,
}

impl PairSource {
    pub fn new(grid: FrequencyGrid, jsi: &Array2<f64>, pair_rate: f64, repetition_rate: f64) -> Result<Self> {
        if jsi.dim() != (grid.n_a(), grid.n_b()) {
            return Err(Error::InvalidGrid("intensity shape does not match grid".into()));
        }
        if jsi.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::InvalidInput("intensity must be finite and non-negative".into()));
        }
        if !(pair_rate > 0.0) || !(repetition_rate > 0.0) {
            return Err(Error::InvalidInput("pair and repetition rates must be positive".into()));
        }
        let total: f64 = jsi.sum();
        if !(total > 0.0) {
            return Err(Error::UndefinedState("intensity table is identically zero".into()));
        }
        let table = jsi / total;
        let mut acc = 0.0;
        let cdf = table
            .iter()
            .map(|v| {
                acc += v;
                acc
            })
            .collect();
        Ok(Self { grid, table, pair_rate, repetition_rate, cdf })
    }

    /// 587 pairs/s/mW at 341 mW.
    pub fn reference_pair_rate() -> f64 {
        PAIR_RATE_PER_MW * PUMP_POWER_MW
    }

    /// Mean number of pairs per pump pulse.
    pub fn mean_pairs_per_pulse(&self) -> f64 {
        self.pair_rate / self.repetition_rate
    }

    /// Grid cell `(i, j)` for a uniform draw `u ∈ [0, 1)`.
    fn cell(&self, u: f64) -> (usize, usize) {
        let k = self.cdf.partition_point(|c| *c <= u * self.cdf[self.cdf.len() - 1]).min(self.cdf.len() - 1);
        (k / self.grid.n_b(), k % self.grid.n_b())
    }
}

/// One generated pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairEmission {
    pub pulse: u64,
    pub time: f64,
    pub omega_a: f64,
    pub omega_b: f64,
}

/// Draws pairs over `duration`, locked to the pulse train.
///
/// The total count is Poisson with mean `rate·duration` and each pair picks a
/// pulse uniformly, which is the same law as an independent Poisson count per
/// pulse. Frequencies come from the table by inverse CDF. Output is sorted by
/// pulse.
pub fn sample_pair_events(src: &PairSource, duration: f64, rng: &mut ChaCha8Rng) -> Result<Vec<PairEmission>> {
    if !(duration > 0.0) {
        return Err(Error::InvalidInput("duration must be positive".into()));
    }
    let pulses = (duration * src.repetition_rate).floor().max(1.0) as u64;
    let mean = src.pair_rate * duration;
    let n = Poisson::new(mean).map_err(|e| Error::InvalidInput(e.to_string()))?.sample(rng) as usize;
    let mut pulse_ids: Vec<u64> = (0..n).map(|_| rng.gen_range(0..pulses)).collect();
    pulse_ids.sort_unstable();
    let (wa, wb) = (src.grid.omega_a(), src.grid.omega_b());
    Ok(pulse_ids
        .into_iter()
        .map(|pulse| {
            let (i, j) = src.cell(rng.gen::<f64>());
            PairEmission { pulse, time: pulse as f64 / src.repetition_rate, omega_a: wa[i], omega_b: wb[j] }
        })
        .collect())
}

/// A photon about to be detected.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Photon {
    pub time: f64,
    pub omega: f64,
}

pub fn signal_photons(pairs: &[PairEmission]) -> Vec<Photon> {
    pairs.iter().map(|p| Photon { time: p.time, omega: p.omega_a }).collect()
}

pub fn idler_photons(pairs: &[PairEmission]) -> Vec<Photon> {
    pairs.iter().map(|p| Photon { time: p.time, omega: p.omega_b }).collect()
}

/// Detects photons: loss, optional dispersion, jitter, dark counts, dead time.
///
/// Dark counts are uniform over `[0, duration)`. Events that land before zero
/// after jitter are dropped so timestamps stay non-negative. Output is sorted.
pub fn apply_detector(
    photons: &[Photon],
    det: &DetectorSpec,
    disp: Option<&DispersionSpec>,
    duration: f64,
    node: u8,
    channel: Channel,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<EventRecord>> {
    det.validate()?;
    let jitter = Normal::new(0.0, det.jitter).map_err(|e| Error::InvalidInput(e.to_string()))?;
    let mut times = Vec::with_capacity(photons.len());
    for p in photons {
        if !rng.gen_bool(det.efficiency) {
            continue;
        }
        let mut t = p.time;
        if let Some(d) = disp {
            t += freq_to_time(d, p.omega)?;
        }
        if det.jitter > 0.0 {
            t += jitter.sample(rng);
        }
        times.push(t);
    }
    if det.dark_rate > 0.0 && duration > 0.0 {
        let n = Poisson::new(det.dark_rate * duration).map_err(|e| Error::InvalidInput(e.to_string()))?.sample(rng)
            as usize;
        times.extend((0..n).map(|_| rng.gen::<f64>() * duration));
    }
    times.retain(|t| *t >= 0.0);
    times.sort_by(f64::total_cmp);
    if det.dead_time > 0.0 {
        let mut last = f64::NEG_INFINITY;
        times.retain(|&t| {
            let keep = t - last >= det.dead_time;
            if keep {
                last = t;
            }
            keep
        });
    }
    Ok(times.into_iter().map(|time| EventRecord { node, channel, time }).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoincidenceResult {
    pub singles_a: usize,
    pub singles_b: usize,
    pub coincidences: usize,
    /// `CC/√(s_a·s_b)`; absent when either stream is empty.
    pub klyshko: Option<f64>,
    /// Matched timestamps `(t_a, t_b)`, sorted by `t_a`.
    #[serde(skip)]
    pub pairs: Vec<(f64, f64)>,
}

/// Matched timestamp pairs within `±window/2`, one-to-one.
///
/// Candidates are taken closest first; ties go to the earlier partner. The
/// ordering key is symmetric in the two streams, so swapping them yields the
/// same matching.
pub fn match_pairs(a: &[f64], b: &[f64], window: f64) -> Vec<(f64, f64)> {
    let half = 0.5 * window;
    let mut candidates: Vec<(f64, f64, f64, usize, usize)> = Vec::new();
    let mut start = 0;
    for (i, &ta) in a.iter().enumerate() {
        while start < b.len() && b[start] < ta - half {
            start += 1;
        }
        let mut j = start;
        while j < b.len() && b[j] <= ta + half {
            let tb = b[j];
            candidates.push(((ta - tb).abs(), ta.min(tb), ta.max(tb), i, j));
            j += 1;
        }
    }
    candidates.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.total_cmp(&y.1)).then(x.2.total_cmp(&y.2)));
    let mut used_a = vec![false; a.len()];
    let mut used_b = vec![false; b.len()];
    let mut out = Vec::new();
    for (_, _, _, i, j) in candidates {
        if !used_a[i] && !used_b[j] {
            used_a[i] = true;
            used_b[j] = true;
            out.push((a[i], b[j]));
        }
    }
    out.sort_by(|x, y| x.0.total_cmp(&y.0));
    out
}

fn times(events: &[EventRecord]) -> Vec<f64> {
    events.iter().filter(|e| e.channel != Channel::Sync).map(|e| e.time).collect()
}

/// Singles, coincidences and the Klyshko efficiency of two detector streams.
pub fn coincidences_and_klyshko(a: &[EventRecord], b: &[EventRecord], window: f64) -> Result<CoincidenceResult> {
    if !(window > 0.0) {
        return Err(Error::InvalidInput("coincidence window must be positive".into()));
    }
    let (ta, tb) = (times(a), times(b));
    if ta.windows(2).any(|w| w[1] < w[0]) || tb.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::InvalidInput("event streams must be sorted".into()));
    }
    let pairs = match_pairs(&ta, &tb, window);
    let (sa, sb) = (ta.len(), tb.len());
    let klyshko = (sa > 0 && sb > 0).then(|| pairs.len() as f64 / ((sa as f64) * (sb as f64)).sqrt());
    Ok(CoincidenceResult { singles_a: sa, singles_b: sb, coincidences: pairs.len(), klyshko, pairs })
}

/// Pump-pulse timing reference.
#[derive(Debug, Clone, PartialEq)]
pub enum SyncReference {
    /// Pulses at `offset + k·period`.
    Periodic { period: f64, offset: f64 },
    /// Recorded sync timestamps, sorted.
    Events(Vec<f64>),
}

impl SyncReference {
    pub fn pulse_train(repetition_rate: f64) -> Self {
        SyncReference::Periodic { period: 1.0 / repetition_rate, offset: 0.0 }
    }

    fn period(&self) -> Result<f64> {
        match self {
            SyncReference::Periodic { period, .. } if *period > 0.0 => Ok(*period),
            SyncReference::Periodic { .. } => Err(Error::InvalidInput("sync period must be positive".into())),
            SyncReference::Events(t) if t.len() >= 2 => Ok((t[t.len() - 1] - t[0]) / (t.len() - 1) as f64),
            SyncReference::Events(t) if t.len() == 1 => Ok(1.0 / REPETITION_RATE),
            SyncReference::Events(_) => Err(Error::Empty("sync stream is empty".into())),
        }
    }

    /// Time of the last pulse at or before `t`.
    fn pulse_before(&self, t: f64) -> Option<f64> {
        match self {
            SyncReference::Periodic { period, offset } => Some(offset + ((t - offset) / period).floor() * period),
            SyncReference::Events(s) => {
                let k = s.partition_point(|v| *v <= t);
                (k > 0).then(|| s[k - 1])
            }
        }
    }
}

fn arrival_span(d: &DispersionSpec, axis: &[f64]) -> Result<(f64, f64)> {
    let t0 = freq_to_time(d, axis[0])?;
    let t1 = freq_to_time(d, axis[axis.len() - 1])?;
    Ok((t0.min(t1), t0.max(t1)))
}

/// Coincidence window wide enough for any pair of dispersed arrivals on the
/// grid, with 1 ns of margin for jitter.
pub fn tof_window(disp_a: &DispersionSpec, disp_b: &DispersionSpec, grid: &FrequencyGrid) -> Result<f64> {
    let (a_lo, a_hi) = arrival_span(disp_a, grid.omega_a())?;
    let (b_lo, b_hi) = arrival_span(disp_b, grid.omega_b())?;
    let spread = (a_hi - b_lo).abs().max((b_hi - a_lo).abs());
    Ok(2.0 * spread + 1e-9)
}

/// Reconstructs the joint spectrum from coincidence arrival times.
///
/// Each detection is referred to its own pump pulse. The arrival window of the
/// grid's frequency range must fit inside one pulse period; events are
/// assigned to the pulse that starts the window they fall in, inverted through
/// the dispersion and binned to the nearest grid point. Events that fall
/// outside the grid are discarded. Returns raw counts.
pub fn tof_reconstruct(
    pairs: &[(f64, f64)],
    sync: &SyncReference,
    disp_a: &DispersionSpec,
    disp_b: &DispersionSpec,
    grid: &FrequencyGrid,
) -> Result<Array2<f64>> {
    let period = sync.period()?;
    let (a_lo, a_hi) = arrival_span(disp_a, grid.omega_a())?;
    let (b_lo, b_hi) = arrival_span(disp_b, grid.omega_b())?;
    let lo = a_lo.min(b_lo);
    let hi = a_hi.max(b_hi);
    if hi - lo >= period {
        return Err(Error::InvalidGrid(format!(
            "grid maps to {:e} s of arrival time, more than one pulse period {period:e} s",
            hi - lo
        )));
    }
    let w0 = lo - 0.5 * (period - (hi - lo));
    let (wa, wb) = (grid.omega_a(), grid.omega_b());
    let index = |axis: &[f64], w: f64| -> Option<usize> {
        let step = (axis[axis.len() - 1] - axis[0]) / (axis.len() - 1) as f64;
        let k = ((w - axis[0]) / step).round();
        (k >= 0.0 && (k as usize) < axis.len()).then_some(k as usize)
    };
    let mut counts = Array2::<f64>::zeros((grid.n_a(), grid.n_b()));
    for &(ta, tb) in pairs {
        let (Some(pa), Some(pb)) = (sync.pulse_before(ta - w0), sync.pulse_before(tb - w0)) else {
            continue;
        };
        let (Ok(fa), Ok(fb)) = (time_to_freq(disp_a, ta - pa), time_to_freq(disp_b, tb - pb)) else {
            continue;
        };
        if let (Some(i), Some(j)) = (index(wa, fa), index(wb, fb)) {
            counts[[i, j]] += 1.0;
        }
    }
    Ok(counts)
}

/// Periodic sync events over `[0, duration)`.
pub fn sync_events(repetition_rate: f64, duration: f64, node: u8) -> Vec<EventRecord> {
    let n = (duration * repetition_rate).ceil() as usize;
    (0..n)
        .map(|k| EventRecord { node, channel: Channel::Sync, time: k as f64 / repetition_rate })
        .collect()
}

/// Merges streams by time; ties keep the order of the inputs.
pub fn merge_streams(streams: &[&[EventRecord]]) -> Vec<EventRecord> {
    let mut all: Vec<EventRecord> = streams.iter().flat_map(|s| s.iter().copied()).collect();
    all.sort_by(|a, b| a.time.total_cmp(&b.time));
    all
}

fn to_picoseconds(t: f64) -> i64 {
    (t * 1e12).round() as i64
}

/// Binary records: node u8, channel u8, timestamp i64 picoseconds, little-endian.
pub fn write_events_binary<W: Write>(events: &[EventRecord], mut w: W) -> Result<()> {
    for e in events {
        w.write_all(&[e.node, e.channel as u8])?;
        w.write_all(&to_picoseconds(e.time).to_le_bytes())?;
    }
    Ok(())
}

pub fn read_events_binary<R: Read>(mut r: R) -> Result<Vec<EventRecord>> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf)?;
    if buf.len() % 10 != 0 {
        return Err(Error::InvalidInput("binary event file length is not a multiple of 10".into()));
    }
    buf.chunks_exact(10)
        .map(|c| {
            let ps = i64::from_le_bytes(c[2..10].try_into().expect("chunk of 10"));
            Ok(EventRecord { node: c[0], channel: Channel::from_u8(c[1])?, time: ps as f64 * 1e-12 })
        })
        .collect()
}

pub fn write_events_csv<W: Write>(events: &[EventRecord], mut w: W) -> Result<()> {
    writeln!(w, "node,channel,time_ps")?;
    for e in events {
        writeln!(w, "{},{},{}", e.node, e.channel.name(), to_picoseconds(e.time))?;
    }
    Ok(())
}

pub fn read_events_csv<R: BufRead>(r: R) -> Result<Vec<EventRecord>> {
    let mut out = Vec::new();
    for (n, line) in r.lines().enumerate() {
        let line = line?;
        if n == 0 || line.trim().is_empty() {
            continue;
        }
        let bad = || Error::InvalidInput(format!("event csv line {}: cannot parse {line:?}", n + 1));
        let mut parts = line.split(',').map(str::trim);
        let node = parts.next().and_then(|s| s.parse().ok()).ok_or_else(bad)?;
        let channel = match parts.next().ok_or_else(bad)? {
            "signal" => Channel::Signal,
            "idler" => Channel::Idler,
            "sync" => Channel::Sync,
            _ => return Err(bad()),
        };
        let ps: i64 = parts.next().and_then(|s| s.parse().ok()).ok_or_else(bad)?;
        out.push(EventRecord { node, channel, time: ps as f64 * 1e-12 });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_grid() -> FrequencyGrid {
        FrequencyGrid::new(TAU * 190e12, TAU * 1e12, 16).unwrap()
    }

    #[test]
    fn freq_to_time_slope() {
        let d = DispersionSpec::dcf_50km();
        let w = |l: f64| TAU * SPEED_OF_LIGHT / l;
        assert_eq!(freq_to_time(&d, w(1565e-9)).unwrap(), 0.0);
        let dt = freq_to_time(&d, w(1566e-9)).unwrap();
        assert!((dt + 895e-12).abs() < 1e-20, "{dt}");
        assert!(freq_to_time(&d, w(1400e-9)).is_err());
        let back = time_to_freq(&d, dt).unwrap();
        assert!((back - w(1566e-9)).abs() / back < 1e-14);
    }

    #[test]
    fn resolution_from_jitter() {
        let r = DispersionSpec::dcf_50km().resolution(SYSTEM_JITTER_FWHM);
        assert!((r - 0.145e-9).abs() < 0.001e-9, "{r}");
    }

    #[test]
    fn pair_count_is_poisson() {
        let jsi = Array2::from_elem((16, 16), 1.0);
        let src = PairSource::new(small_grid(), &jsi, 0.196e6, REPETITION_RATE).unwrap();
        let pairs = sample_pair_events(&src, 1.0, &mut stream_rng(7, 0)).unwrap();
        let n = pairs.len() as f64;
        assert!((n - 196_000.0).abs() < 3.0 * 196_000f64.sqrt());
        assert!(pairs.windows(2).all(|w| w[0].pulse <= w[1].pulse));
    }

    #[test]
    fn delta_table_draws_one_cell() {
        let g = small_grid();
        let mut jsi = Array2::zeros((16, 16));
        jsi[[3, 11]] = 5.0;
        let src = PairSource::new(g.clone(), &jsi, 1e4, REPETITION_RATE).unwrap();
        let pairs = sample_pair_events(&src, 0.1, &mut stream_rng(1, 0)).unwrap();
        assert!(!pairs.is_empty());
        assert!(pairs.iter().all(|p| p.omega_a == g.omega_a()[3] && p.omega_b == g.omega_b()[11]));
    }

    #[test]
    fn identity_detector() {
        let photons: Vec<Photon> = (0..50).map(|k| Photon { time: k as f64 * 1e-8, omega: 1.0 }).collect();
        let ev = apply_detector(&photons, &DetectorSpec::ideal(), None, 1e-6, 0, Channel::Signal, &mut stream_rng(0, 0))
            .unwrap();
        assert_eq!(ev.len(), 50);
        assert!(ev.iter().zip(&photons).all(|(e, p)| e.time == p.time));
    }

    #[test]
    fn zero_efficiency_leaves_darks() {
        let photons: Vec<Photon> = (0..1000).map(|k| Photon { time: k as f64 * 1e-6, omega: 1.0 }).collect();
        let det = DetectorSpec::new(0.0, 0.0, 1e4, 0.0).unwrap();
        let ev = apply_detector(&photons, &det, None, 1.0, 0, Channel::Idler, &mut stream_rng(0, 1)).unwrap();
        assert!((ev.len() as f64 - 1e4).abs() < 5.0 * 100.0);
    }

    #[test]
    fn dead_time_cut() {
        let photons: Vec<Photon> = (0..10).map(|k| Photon { time: k as f64 * 1e-9, omega: 1.0 }).collect();
        let det = DetectorSpec::new(1.0, 0.0, 0.0, 2.5e-9).unwrap();
        let ev = apply_detector(&photons, &det, None, 1e-6, 0, Channel::Signal, &mut stream_rng(0, 0)).unwrap();
        let t: Vec<f64> = ev.iter().map(|e| e.time).collect();
        assert_eq!(t, [0.0, 3.0, 6.0, 9.0].map(|k| k * 1e-9));
    }

    #[test]
    fn identical_streams_give_unit_klyshko() {
        let ev: Vec<EventRecord> =
            (0..100).map(|k| EventRecord { node: 0, channel: Channel::Signal, time: k as f64 * 1e-7 }).collect();
        let r = coincidences_and_klyshko(&ev, &ev, 3e-9).unwrap();
        assert_eq!((r.singles_a, r.singles_b, r.coincidences), (100, 100, 100));
        assert_eq!(r.klyshko, Some(1.0));
        let empty = coincidences_and_klyshko(&ev, &[], 3e-9).unwrap();
        assert_eq!(empty.coincidences, 0);
        assert!(empty.klyshko.is_none());
    }

    #[test]
    fn greedy_takes_nearest() {
        let m = match_pairs(&[0.0, 1.0], &[0.9], 4.0);
        assert_eq!(m, vec![(1.0, 0.9)]);
        // equal distance: the earlier partner wins
        let m = match_pairs(&[1.0], &[0.5, 1.5], 2.0);
        assert_eq!(m, vec![(1.0, 0.5)]);
    }

    #[test]
    fn binary_and_csv_round_trip() {
        let ev = vec![
            EventRecord { node: 0, channel: Channel::Sync, time: 0.0 },
            EventRecord { node: 1, channel: Channel::Idler, time: 1.234567e-3 },
            EventRecord { node: 0, channel: Channel::Signal, time: 13.158e-9 },
        ];
        let mut bin = Vec::new();
        write_events_binary(&ev, &mut bin).unwrap();
        assert_eq!(bin.len(), 30);
        assert_eq!(&bin[10..12], &[1, 1]);
        let back = read_events_binary(&bin[..]).unwrap();
        let mut csv = Vec::new();
        write_events_csv(&ev, &mut csv).unwrap();
        let back_csv = read_events_csv(&csv[..]).unwrap();
        assert_eq!(back, back_csv);
        for (a, b) in ev.iter().zip(&back) {
            assert_eq!((a.node, a.channel), (b.node, b.channel));
            assert!((a.time - b.time).abs() < 1e-12);
        }
        assert!(read_events_binary(&bin[..7]).is_err());
    }

    #[test]
    fn noiseless_reconstruction_is_exact() {
        let center = TAU * SPEED_OF_LIGHT / 1584e-9;
        let g = FrequencyGrid::new(center, TAU * 1.5e12, 32).unwrap();
        let jsi = Array2::from_shape_fn((32, 32), |(i, j)| if i + j == 31 { 1.0 + (i % 3) as f64 } else { 0.0 });
        let src = PairSource::new(g.clone(), &jsi, 1e6, REPETITION_RATE).unwrap();
        let pairs = sample_pair_events(&src, 0.1, &mut stream_rng(3, 0)).unwrap();
        let d = DispersionSpec::dcf_50km();
        let det = DetectorSpec::ideal();
        let a = apply_detector(&signal_photons(&pairs), &det, Some(&d), 0.1, 0, Channel::Signal, &mut stream_rng(3, 1))
            .unwrap();
        let b = apply_detector(&idler_photons(&pairs), &det, Some(&d), 0.1, 0, Channel::Idler, &mut stream_rng(3, 2))
            .unwrap();
        let cc = coincidences_and_klyshko(&a, &b, tof_window(&d, &d, &g).unwrap()).unwrap();
        assert!(cc.coincidences as f64 > 0.99 * pairs.len() as f64);
        let counts = tof_reconstruct(&cc.pairs, &SyncReference::pulse_train(REPETITION_RATE), &d, &d, &g).unwrap();
        let expected = &src.table * counts.sum();
        let dev: f64 = (&counts - &expected).iter().map(|v| v.abs()).sum::<f64>() / counts.sum();
        assert!(dev < 0.03, "{dev}");
        // only multi-pair pulses can produce off-diagonal matches
        let off: f64 = counts.indexed_iter().filter(|((i, j), _)| i + j != 31).map(|(_, v)| v).sum();
        assert!(off / counts.sum() < 0.01);
        let wide = FrequencyGrid::new(center, TAU * 4e12, 32).unwrap();
        assert!(tof_reconstruct(&cc.pairs, &SyncReference::pulse_train(REPETITION_RATE), &d, &d, &wide).is_err());
        assert!(tof_reconstruct(&cc.pairs, &SyncReference::Events(vec![]), &d, &d, &g).is_err());
    }
}
