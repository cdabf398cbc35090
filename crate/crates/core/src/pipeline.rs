//! Runnable pipelines that write their data products to an output directory.
//!
//! Every run writes `config.resolved.ini` and `manifest.json` next to the data
//! files. CSV files are long format with units in the column names and floats
//! in shortest round-trip scientific notation. Nothing in the outputs depends
//! on wall-clock time, so equal configs and seeds give identical files.

use std::f64::consts::TAU;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::analysis::{detect_bins, difference_marginal, extract_bin, marginals, schmidt_decompose, valley_to_peak, BinReport};
use crate::config::{serialize_config, Pipeline, RunConfig};
use crate::detection::{
    apply_detector, coincidences_and_klyshko, idler_photons, merge_streams, rss, sample_pair_events, signal_photons,
    stream_rng, tof_reconstruct, tof_window, write_events_binary, Channel, PairSource, SyncReference,
};
use crate::error::{Error, Result};
use crate::hom::{default_scan_range, hom_curve_centered};
use crate::network::{
    configured_bin_count, fold_and_histogram, histogram_spectrum, resolve_report, simulate_two_node, FoldParams,
};
use crate::spectral::{build_jsa, ridge_fwhm_hz, FrequencyGrid, JointAmplitude, PhaseMatchModel, SPEED_OF_LIGHT};
use crate::synthesis::{apply_bidirectional, time_difference_profile, to_frequency, to_time, SynthesisConfig, REPETITION_RATE};

/// Largest number of points per axis written for a 2-D map.
pub const MAX_MAP_POINTS: usize = 256;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Manifest {
    pub pipeline: String,
    pub config_sha256: String,
    pub seed: u64,
    /// Output files relative to the output directory, sorted.
    pub files: Vec<String>,
    pub metrics: Value,
    pub warnings: Vec<String>,
}

/// Machine-readable description of a failed run.
pub fn error_record(err: &Error) -> Value {
    let mut v = json!({ "error": err.kind(), "message": err.to_string() });
    if let Error::Config { line, .. } = err {
        v["line"] = json!(line);
    }
    v
}

pub fn config_sha256(cfg: &RunConfig) -> String {
    Sha256::digest(serialize_config(cfg).as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
}

struct Outputs {
    dir: PathBuf,
    files: Vec<String>,
    warnings: Vec<String>,
}

fn fmt(v: f64) -> String {
    format!("{v:e}")
}

impl Outputs {
    fn new(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(Self { dir: dir.to_path_buf(), files: Vec::new(), warnings: Vec::new() })
    }

    fn create(&mut self, name: &str) -> Result<BufWriter<fs::File>> {
        self.files.push(name.to_string());
        Ok(BufWriter::new(fs::File::create(self.dir.join(name))?))
    }

    fn csv(&mut self, name: &str, header: &[&str], rows: impl IntoIterator<Item = Vec<f64>>) -> Result<()> {
        let mut w = self.create(name)?;
        writeln!(w, "{}", header.join(","))?;
        for row in rows {
            let line: Vec<String> = row.into_iter().map(fmt).collect();
            writeln!(w, "{}", line.join(","))?;
        }
        w.flush()?;
        Ok(())
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut w = self.create(name)?;
        serde_json::to_writer_pretty(&mut w, value)?;
        writeln!(w)?;
        w.flush()?;
        Ok(())
    }

    /// Long-format map, block-averaged down to at most `MAX_MAP_POINTS` per axis.
    fn map(&mut self, name: &str, header: [&str; 3], axis_a: &[f64], axis_b: &[f64], m: &Array2<f64>) -> Result<()> {
        let (pa, pm_a) = pool_axis(axis_a, MAX_MAP_POINTS);
        let (pb, pm_b) = pool_axis(axis_b, MAX_MAP_POINTS);
        let pooled = pool_matrix(m, pm_a, pm_b);
        let rows = (0..pa.len()).flat_map(|i| {
            let (pa, pb, pooled) = (&pa, &pb, &pooled);
            (0..pb.len()).map(move |j| vec![pa[i], pb[j], pooled[[i, j]]])
        });
        self.csv(name, &header, rows)
    }

    fn warn(&mut self, msg: impl Into<String>) {
        self.warnings.push(msg.into());
    }
}

fn pool_factor(n: usize, max: usize) -> usize {
    n.div_ceil(max).max(1)
}

fn pool_axis(axis: &[f64], max: usize) -> (Vec<f64>, usize) {
    let k = pool_factor(axis.len(), max);
    (axis.chunks(k).map(|c| c.iter().sum::<f64>() / c.len() as f64).collect(), k)
}

fn pool_matrix(m: &Array2<f64>, ka: usize, kb: usize) -> Array2<f64> {
    let (na, nb) = m.dim();
    let (pa, pb) = (na.div_ceil(ka), nb.div_ceil(kb));
    Array2::from_shape_fn((pa, pb), |(i, j)| {
        let rows = i * ka..((i + 1) * ka).min(na);
        let cols = j * kb..((j + 1) * kb).min(nb);
        let cells = (rows.len() * cols.len()) as f64;
        rows.flat_map(|r| cols.clone().map(move |c| (r, c))).map(|(r, c)| m[[r, c]]).sum::<f64>() / cells
    })
}

/// Baseline amplitude and its synthesized, normalized counterpart on a grid
/// centred at degeneracy.
fn synthesized(cfg: &RunConfig, span_hz: f64, n: usize) -> Result<(FrequencyGrid, JointAmplitude, JointAmplitude)> {
    let grid = FrequencyGrid::new(cfg.degenerate_omega(), TAU * span_hz, n)?;
    let base = build_jsa(&grid, &cfg.pump()?, &cfg.crystal()?, true)?;
    let g = apply_bidirectional(&base, &cfg.synthesis()?).normalized()?;
    Ok((grid, base, g))
}

/// Phase of the modulation along the anti-diagonal at degeneracy, which sets
/// where the bins sit relative to `ν₀`.
fn effective_phase(sc: &SynthesisConfig, w0: f64) -> f64 {
    sc.phase - w0 * (sc.delay_h + sc.delay_v)
}

/// Bin centers `ν₀ + (φ/2π + m)·Δν` for `m` in `-k..=k`.
pub fn bin_centers(sc: &SynthesisConfig, w0: f64, k: usize) -> Option<Vec<f64>> {
    let spacing = sc.bin_spacing_hz()?;
    let shift = (effective_phase(sc, w0) / TAU).rem_euclid(1.0);
    let shift = if shift > 0.5 { shift - 1.0 } else { shift };
    let k = k as i64;
    Some((-k..=k).map(|m| w0 / TAU + (shift + m as f64) * spacing).collect())
}

fn report_metrics(r: &BinReport, expected: Option<f64>) -> Value {
    let median_fwhm = median(&r.fwhm_hz);
    json!({
        "detected_spacing_hz": r.spacing_hz,
        "spacing_relative_error": match (r.spacing_hz, expected) {
            (Some(d), Some(e)) => Some(d / e - 1.0),
            _ => None,
        },
        "bin_count": r.count,
        "single_peak": r.single_peak,
        "median_fwhm_hz": median_fwhm,
    })
}

fn median(v: &[f64]) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    Some(s[s.len() / 2])
}

fn merge(a: &mut Value, b: Value) {
    if let (Value::Object(a), Value::Object(b)) = (a, b) {
        a.extend(b);
    }
}

fn run_jsi(cfg: &RunConfig, out: &mut Outputs) -> Result<Value> {
    let sc = cfg.synthesis()?;
    let (grid, _, g) = synthesized(cfg, cfg.source.grid_span_thz * 1e12, cfg.source.grid_points)?;
    let jsi = g.intensity();
    let (ha, hb) = (grid.omega_a_hz(), grid.omega_b_hz());
    out.map("jsi.csv", ["nu_a_hz", "nu_b_hz", "intensity"], &ha, &hb, &jsi)?;
    let (ma, mb) = marginals(&jsi, &grid)?;
    out.csv("marginals.csv", &["nu_hz", "marginal_a", "marginal_b"], (0..ha.len()).map(|i| vec![ha[i], ma[i], mb[i]]))?;
    let (axis, prof) = difference_marginal(&jsi, &grid)?;
    out.csv("difference_projection.csv", &["nu_hz", "intensity"], axis.iter().zip(&prof).map(|(a, p)| vec![*a, *p]))?;
    let mut metrics = json!({
        "separation_s": sc.separation(),
        "phase_rad": sc.phase,
        "expected_spacing_hz": sc.bin_spacing_hz(),
    });
    if let PhaseMatchModel::Linearized { beta_h, beta_v, .. } = cfg.crystal()?.model {
        metrics["ridge_fwhm_hz"] = json!(ridge_fwhm_hz(beta_h, beta_v, cfg.source.crystal_length_mm * 1e-3));
    }
    match detect_bins(&prof, &axis, cfg.analysis.threshold_db) {
        Ok(r) => {
            merge(&mut metrics, report_metrics(&r, sc.bin_spacing_hz()));
            out.json("bins.json", &r)?;
        }
        Err(e) => out.warn(format!("bin detection failed: {e}")),
    }
    Ok(metrics)
}

/// Distance between the centroids of the two lobes of a two-peaked profile,
/// split halfway between its two largest local maxima.
fn lobe_separation(axis: &[f64], p: &[f64]) -> Option<f64> {
    let mut peaks: Vec<usize> = (1..p.len() - 1).filter(|&i| p[i] > p[i - 1] && p[i] >= p[i + 1]).collect();
    peaks.sort_by(|&a, &b| p[b].total_cmp(&p[a]));
    let [a, b, ..] = peaks[..] else { return None };
    if p[b] < 0.5 * p[a] {
        return None;
    }
    let mid = 0.5 * (axis[a] + axis[b]);
    let centroid = |keep: &dyn Fn(f64) -> bool| {
        let (m, w) = axis.iter().zip(p).filter(|(t, _)| keep(**t)).fold((0.0, 0.0), |(m, w), (t, v)| (m + t * v, w + v));
        m / w
    };
    Some(centroid(&|t| t > mid) - centroid(&|t| t <= mid))
}

fn run_jta(cfg: &RunConfig, out: &mut Outputs) -> Result<Value> {
    let sc = cfg.synthesis()?;
    let (_, _, g) = synthesized(cfg, cfg.source.grid_span_thz * 1e12, cfg.source.grid_points)?;
    let jta = to_time(&g)?;
    let round_trip = to_frequency(&jta)?;
    let scale = g.values.iter().map(|v| v.norm()).fold(0.0, f64::max);
    let round_trip_error =
        g.values.iter().zip(round_trip.values.iter()).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max) / scale;
    let jti = jta.intensity();
    // crop to where the intensity is visible before pooling
    let peak = jti.iter().copied().fold(0.0, f64::max);
    let (mut lo, mut hi) = ((usize::MAX, usize::MAX), (0, 0));
    for ((i, j), v) in jti.indexed_iter() {
        if *v >= 1e-4 * peak {
            lo = (lo.0.min(i), lo.1.min(j));
            hi = (hi.0.max(i), hi.1.max(j));
        }
    }
    let crop = jti.slice(ndarray::s![lo.0..=hi.0, lo.1..=hi.1]).to_owned();
    out.map("jti.csv", ["t_a_s", "t_b_s", "intensity"], &jta.t_a[lo.0..=hi.0], &jta.t_b[lo.1..=hi.1], &crop)?;
    let (axis, prof) = time_difference_profile(&jta);
    out.csv("time_difference.csv", &["t_minus_s", "intensity"], axis.iter().zip(&prof).map(|(a, p)| vec![*a, *p]))?;
    Ok(json!({
        "separation_s": sc.separation(),
        "measured_separation_s": lobe_separation(&axis, &prof),
        "time_step_s": jta.step_a(),
        "norm": jta.norm_sq(),
        "round_trip_max_error": round_trip_error,
    }))
}

fn run_schmidt(cfg: &RunConfig, out: &mut Outputs) -> Result<Value> {
    let a = &cfg.analysis;
    let sc = cfg.synthesis()?;
    let w0 = cfg.degenerate_omega();
    let (_, _, g) = synthesized(cfg, a.schmidt_span_thz * 1e12, a.schmidt_points)?;
    let full = schmidt_decompose(&g, a.schmidt_threshold)?;
    out.warnings.extend(full.warnings.iter().cloned());
    let shown = full.coefficients.len().min(200);
    out.csv("schmidt_coefficients.csv", &["mode", "weight"], (0..shown).map(|k| vec![k as f64, full.coefficients[k]]))?;
    let mut metrics = json!({
        "schmidt_number": full.schmidt_number,
        "purity": full.purity,
        "dimension_proxy": full.dimension_proxy(),
        "modes_retained": full.modes_retained,
        "grid_points": a.schmidt_points,
        "grid_span_hz": a.schmidt_span_thz * 1e12,
    });
    let Some(centers) = bin_centers(&sc, w0, a.bins_per_side) else {
        out.warn("no modulation, per-bin purity skipped");
        return Ok(metrics);
    };
    let spacing = sc.bin_spacing_hz().expect("modulated");
    let pump = cfg.pump()?;
    let crystal = cfg.crystal()?;
    let mut rows = Vec::new();
    for c in centers {
        let partner = 2.0 * w0 / TAU - c;
        let axis = |mid: f64| -> Vec<f64> {
            (0..a.bin_points)
                .map(|k| TAU * (mid - spacing + 2.0 * spacing * k as f64 / (a.bin_points - 1) as f64))
                .collect()
        };
        let grid = FrequencyGrid::from_axes(axis(c), axis(partner), w0)?;
        let local = apply_bidirectional(&build_jsa(&grid, &pump, &crystal, false)?, &sc);
        let bin = extract_bin(&local.intensity(), &grid, c, spacing)?;
        let s = schmidt_decompose(&bin, a.schmidt_threshold)?;
        rows.push(vec![c, s.schmidt_number, s.purity]);
    }
    out.csv("bin_purity.csv", &["center_hz", "schmidt_number", "purity"], rows.clone())?;
    let mean_k = rows.iter().map(|r| r[1]).sum::<f64>() / rows.len() as f64;
    metrics["bin_spacing_hz"] = json!(spacing);
    metrics["mean_bin_schmidt_number"] = json!(mean_k);
    Ok(metrics)
}

fn run_hom(cfg: &RunConfig, out: &mut Outputs) -> Result<Value> {
    let sc = cfg.synthesis()?;
    let (_, _, g) = synthesized(cfg, cfg.source.grid_span_thz * 1e12, cfg.source.grid_points)?;
    let range = cfg.analysis.hom_range_ps.map_or_else(|| default_scan_range(sc.separation()), |r| r * 1e-12);
    let curve = hom_curve_centered(&g, sc.hom_center(), range, cfg.analysis.hom_points)?;
    out.csv(
        "hom.csv",
        &["relative_delay_s", "delay_s", "coincidence_probability"],
        curve.delays.iter().zip(&curve.probability).map(|(d, p)| vec![*d, curve.center + d, *p]),
    )?;
    if curve.metrics.is_none() {
        out.warn("no interference fringe in the scanned range");
    }
    Ok(json!({
        "center_delay_s": curve.center,
        "range_s": range,
        "expected_period_s": 0.5 * sc.separation().abs(),
        "fringe": curve.metrics,
    }))
}

fn pearson(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.sum() / n, b.sum() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b.iter()) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    sab / (saa * sbb).sqrt()
}

/// Bins a fine intensity table onto a coarser grid with the same span, using
/// the same nearest-point rule as the reconstruction.
pub fn rebin(jsi: &Array2<f64>, fine: &FrequencyGrid, coarse: &FrequencyGrid) -> Array2<f64> {
    let index = |axis: &[f64], w: f64| -> Option<usize> {
        let step = (axis[axis.len() - 1] - axis[0]) / (axis.len() - 1) as f64;
        let k = ((w - axis[0]) / step).round();
        (k >= 0.0 && (k as usize) < axis.len()).then_some(k as usize)
    };
    let mut out = Array2::<f64>::zeros((coarse.n_a(), coarse.n_b()));
    for ((i, j), v) in jsi.indexed_iter() {
        if let (Some(p), Some(q)) = (index(coarse.omega_a(), fine.omega_a()[i]), index(coarse.omega_b(), fine.omega_b()[j])) {
            out[[p, q]] += v;
        }
    }
    out
}

/// Widest spectral span (Hz) whose dispersed arrivals fit in a fraction of one
/// pulse period.
pub fn tof_span_hz(dispersion: f64, center_omega: f64, fraction: f64) -> f64 {
    let lambda = TAU * SPEED_OF_LIGHT / center_omega;
    let seconds_per_hz = dispersion.abs() * lambda * lambda / SPEED_OF_LIGHT;
    fraction / (REPETITION_RATE * seconds_per_hz)
}

fn run_tof(cfg: &RunConfig, out: &mut Outputs) -> Result<Value> {
    let d = &cfg.detection;
    let sc = cfg.synthesis()?;
    let det = cfg.detector()?;
    let disp = cfg.dispersion()?;
    let w0 = cfg.degenerate_omega();
    let span = (cfg.source.grid_span_thz * 1e12).min(tof_span_hz(disp.dispersion, w0, 0.9));
    let (grid, _, g) = synthesized(cfg, span, d.tof_source_points)?;
    let jsi = g.intensity();
    let src = PairSource::new(grid.clone(), &jsi, d.pair_rate_hz, REPETITION_RATE)?;
    let seed = cfg.run.seed;
    let pairs = sample_pair_events(&src, d.duration_s, &mut stream_rng(seed, 0))?;
    let (a, b) = rayon::join(
        || apply_detector(&signal_photons(&pairs), &det, Some(&disp), d.duration_s, 0, Channel::Signal, &mut stream_rng(seed, 1)),
        || apply_detector(&idler_photons(&pairs), &det, Some(&disp), d.duration_s, 0, Channel::Idler, &mut stream_rng(seed, 2)),
    );
    let (a, b) = (a?, b?);
    let window = (d.window_ns * 1e-9).max(tof_window(&disp, &disp, &grid)?);
    let cc = coincidences_and_klyshko(&a, &b, window)?;
    let rec_grid = FrequencyGrid::new(w0, TAU * span, d.tof_points)?;
    let counts = tof_reconstruct(&cc.pairs, &SyncReference::pulse_train(REPETITION_RATE), &disp, &disp, &rec_grid)?;
    let expected = rebin(&jsi, &grid, &rec_grid);
    let (ha, hb) = (rec_grid.omega_a_hz(), rec_grid.omega_b_hz());
    out.map("tof_counts.csv", ["nu_a_hz", "nu_b_hz", "counts"], &ha, &hb, &counts)?;
    out.map("tof_expected.csv", ["nu_a_hz", "nu_b_hz", "intensity"], &ha, &hb, &expected)?;
    let (axis, prof) = difference_marginal(&counts, &rec_grid)?;
    out.csv("tof_difference_projection.csv", &["nu_hz", "counts"], axis.iter().zip(&prof).map(|(a, p)| vec![*a, *p]))?;
    if d.write_events {
        let events = merge_streams(&[&a, &b]);
        write_events_binary(&events, out.create("events.bin")?)?;
    }
    let mut metrics = json!({
        "pairs": pairs.len(),
        "singles_signal": cc.singles_a,
        "singles_idler": cc.singles_b,
        "coincidences": cc.coincidences,
        "klyshko_efficiency": cc.klyshko,
        "coincidence_window_s": window,
        "reconstructed_counts": counts.sum(),
        "source_span_hz": span,
        "correlation": pearson(&counts, &expected),
        "spectral_resolution_m": disp.resolution(det.jitter_fwhm() * std::f64::consts::SQRT_2),
    });
    if let Some(spacing) = sc.bin_spacing_hz() {
        metrics["valley_to_peak"] = json!(valley_to_peak(&prof, &axis, spacing)?);
        metrics["expected_valley_to_peak"] = json!(valley_to_peak(&difference_marginal(&expected, &rec_grid)?.1, &axis, spacing)?);
    }
    match detect_bins(&prof, &axis, cfg.analysis.threshold_db) {
        Ok(r) => {
            merge(&mut metrics, report_metrics(&r, sc.bin_spacing_hz()));
            out.json("tof_bins.json", &r)?;
        }
        Err(e) => out.warn(format!("bin detection failed: {e}")),
    }
    Ok(metrics)
}

fn run_netsim(cfg: &RunConfig, out: &mut Outputs) -> Result<Value> {
    let n = &cfg.network;
    let sc = cfg.synthesis()?;
    let det = cfg.detector()?;
    let disp = cfg.local_dispersion()?;
    let link = cfg.link();
    let (clock_l, clock_r) = cfg.clocks()?;
    let w0 = cfg.degenerate_omega();
    let (grid, base, g) = synthesized(cfg, n.source_span_thz * 1e12, n.source_points)?;
    let src = PairSource::new(grid.clone(), &g.intensity(), cfg.detection.pair_rate_hz, REPETITION_RATE)?;
    let ev = simulate_two_node(&src, &det, &disp, &det, &link, (&clock_l, &clock_r), n.duration_s, cfg.run.seed)?;
    let period = 1.0 / REPETITION_RATE;
    let origin = if n.referenced { crate::detection::freq_to_time(&disp, w0)? - 0.5 * period } else { -0.5 * period };
    let mut params = FoldParams::new(REPETITION_RATE, origin);
    params.bin_width = n.bin_width_ps * 1e-12;
    params.window = n.window_ns * 1e-9;
    params.gross_delay = n.gross_delay_ns.map(|v| v * 1e-9);
    params.referenced = n.referenced;
    let h = fold_and_histogram(&ev.local, &ev.remote, &params)?;
    out.csv(
        "histogram.csv",
        &["bin_start_s", "bin_center_s", "counts"],
        (0..h.counts.len()).map(|i| vec![h.bin_start(i), h.bin_center(i), h.counts[i] as f64]),
    )?;
    let (axis, prof) = histogram_spectrum(&h, &disp);
    out.csv("spectrum.csv", &["nu_hz", "counts"], axis.iter().zip(&prof).map(|(a, p)| vec![*a, *p]))?;
    if n.write_events {
        write_events_binary(&ev.local, out.create("events_local.bin")?)?;
        write_events_binary(&ev.remote, out.create("events_remote.bin")?)?;
    }
    let jitter = rss(&[det.jitter, det.jitter, clock_l.jitter, clock_r.jitter]);
    let mut metrics = json!({
        "pairs": ev.pairs,
        "local_events": ev.local.len(),
        "remote_events": ev.remote.len(),
        "coincidences": h.coincidences,
        "gross_delay_s": h.gross_delay,
        "referenced": n.referenced,
        "timing_jitter_rms_s": jitter,
        "spectral_resolution_m": disp.resolution(jitter),
    });
    if let Some(spacing) = sc.bin_spacing_hz() {
        metrics["valley_to_peak"] = json!(valley_to_peak(&prof, &axis, spacing)?);
    }
    match resolve_report(&h, &disp) {
        Ok(r) => {
            merge(&mut metrics, report_metrics(&r, sc.bin_spacing_hz()));
            if let Some(spacing) = sc.bin_spacing_hz() {
                let (ma, _) = marginals(&base.intensity(), &grid)?;
                metrics["configured_bin_count"] =
                    json!(configured_bin_count(&ma, &grid.omega_a_hz(), w0 / TAU, spacing, cfg.analysis.threshold_db));
            }
            out.json("bins.json", &r)?;
        }
        Err(e) => out.warn(format!("bins not resolved: {e}")),
    }
    Ok(metrics)
}

/// Runs the configured pipeline and writes its outputs plus a manifest.
pub fn run_pipeline(cfg: &RunConfig, out_dir: &Path) -> Result<Manifest> {
    run_pipeline_with_warnings(cfg, out_dir, &[])
}

/// As [`run_pipeline`], recording `warnings` from configuration parsing in the
/// manifest.
pub fn run_pipeline_with_warnings(cfg: &RunConfig, out_dir: &Path, warnings: &[String]) -> Result<Manifest> {
    cfg.validate()?;
    let pipeline = cfg.pipeline()?;
    let mut out = Outputs::new(out_dir)?;
    out.warnings.extend_from_slice(warnings);
    out.create("config.resolved.ini")?.write_all(serialize_config(cfg).as_bytes())?;
    let metrics = match pipeline {
        Pipeline::Jsi => run_jsi(cfg, &mut out),
        Pipeline::Jta => run_jta(cfg, &mut out),
        Pipeline::Schmidt => run_schmidt(cfg, &mut out),
        Pipeline::Hom => run_hom(cfg, &mut out),
        Pipeline::Tof => run_tof(cfg, &mut out),
        Pipeline::Netsim => run_netsim(cfg, &mut out),
    }?;
    let mut files = out.files.clone();
    files.sort();
    let manifest = Manifest {
        pipeline: pipeline.name().to_string(),
        config_sha256: config_sha256(cfg),
        seed: cfg.run.seed,
        files,
        metrics,
        warnings: out.warnings.clone(),
    };
    out.json("manifest.json", &manifest)?;
    Ok(manifest)
}
