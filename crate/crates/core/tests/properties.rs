use std::f64::consts::TAU;

use freqbin_core::analysis::{detect_bins, schmidt_decompose};
use freqbin_core::config::{parse_config, serialize_config};
use freqbin_core::detection::{
    freq_to_time, match_pairs, read_events_binary, read_events_csv, time_to_freq, write_events_binary,
    write_events_csv, Channel, DispersionSpec, EventRecord,
};
use freqbin_core::hom::hom_curve;
use freqbin_core::spectral::{build_jsa, CrystalSpec, FrequencyGrid, JointAmplitude, PumpSpectrum, SPEED_OF_LIGHT};
use freqbin_core::synthesis::{apply_bidirectional, jsi_from_amplitude, to_frequency, to_time, SynthesisConfig};
use ndarray::Array2;
use num_complex::Complex64;
use proptest::prelude::*;

fn grid(na: usize, nb: usize) -> FrequencyGrid {
    let axis = |n: usize| (0..n).map(|k| TAU * (190e12 + 1e10 * k as f64)).collect::<Vec<_>>();
    FrequencyGrid::from_axes(axis(na), axis(nb), TAU * 190e12).unwrap()
}

fn amplitude() -> impl Strategy<Value = JointAmplitude> {
    (2usize..24, 2usize..24).prop_flat_map(|(na, nb)| {
        prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), na * nb).prop_map(move |v| {
            let values = Array2::from_shape_vec((na, nb), v.into_iter().map(|(re, im)| Complex64::new(re, im)).collect())
                .unwrap();
            JointAmplitude::new(grid(na, nb), values).unwrap()
        })
    })
}

fn small_model() -> (JointAmplitude, f64) {
    let pump = PumpSpectrum::reference();
    let w0 = pump.degenerate_omega();
    let g = FrequencyGrid::new(w0, TAU * 4e12, 96).unwrap();
    (build_jsa(&g, &pump, &CrystalSpec::reference(w0), false).unwrap(), w0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn schmidt_weights_are_a_distribution(f in amplitude()) {
        prop_assume!(f.values.iter().any(|v| v.norm() > 1e-6));
        let s = schmidt_decompose(&f, 1e-3).unwrap();
        let total: f64 = s.coefficients.iter().sum();
        prop_assert!((total - 1.0).abs() < 1e-12);
        prop_assert!(s.coefficients.windows(2).all(|w| w[0] >= w[1]));
        prop_assert!(s.coefficients.iter().all(|c| *c >= 0.0));
        let dim = f.grid.n_a().min(f.grid.n_b()) as f64;
        prop_assert!(s.schmidt_number >= 1.0 - 1e-12 && s.schmidt_number <= dim + 1e-9);
        prop_assert!((s.purity * s.schmidt_number - 1.0).abs() < 1e-12);
    }

    #[test]
    fn product_amplitudes_are_separable(
        u in prop::collection::vec(0.1f64..1.0, 2..20),
        v in prop::collection::vec(0.1f64..1.0, 2..20),
    ) {
        let values = Array2::from_shape_fn((u.len(), v.len()), |(i, j)| Complex64::new(u[i] * v[j], 0.0));
        let s = schmidt_decompose(&JointAmplitude::new(grid(u.len(), v.len()), values).unwrap(), 1e-3).unwrap();
        prop_assert!((s.schmidt_number - 1.0).abs() < 1e-9);
    }

    #[test]
    fn schmidt_is_invariant_under_local_phases(f in amplitude(), seed in 0u64..1000) {
        prop_assume!(f.values.iter().any(|v| v.norm() > 1e-6));
        let (na, nb) = f.values.dim();
        let phase = |k: usize, salt: u64| ((k as u64 * 2654435761 + seed * 97 + salt) % 1000) as f64 * TAU / 1000.0;
        let rotated = Array2::from_shape_fn((na, nb), |(i, j)| {
            f.values[[i, j]] * Complex64::from_polar(1.0, phase(i, 1) + phase(j, 2))
        });
        let a = schmidt_decompose(&f, 1e-3).unwrap();
        let b = schmidt_decompose(&JointAmplitude::new(f.grid.clone(), rotated).unwrap(), 1e-3).unwrap();
        prop_assert!((a.schmidt_number - b.schmidt_number).abs() < 1e-8 * a.schmidt_number);
    }

    #[test]
    fn modulation_is_bounded_and_complementary(spacing in 40e9f64..800e9, phase in -3.0f64..3.0) {
        let (f, _) = small_model();
        let base = f.intensity();
        let a = jsi_from_amplitude(&apply_bidirectional(&f, &SynthesisConfig::for_bin_spacing(spacing, phase).unwrap()));
        let b = jsi_from_amplitude(&apply_bidirectional(&f, &SynthesisConfig::for_bin_spacing(spacing, phase + std::f64::consts::PI).unwrap()));
        let peak = base.iter().copied().fold(0.0, f64::max);
        for ((x, y), z) in base.iter().zip(a.iter()).zip(b.iter()) {
            prop_assert!(*y <= 4.0 * x + 1e-12 * peak);
            prop_assert!((y + z - 4.0 * x).abs() <= 1e-9 * peak);
        }
    }

    #[test]
    fn time_domain_round_trip(spacing in 50e9f64..500e9, phase in -3.0f64..3.0) {
        let (f, _) = small_model();
        let g = apply_bidirectional(&f, &SynthesisConfig::for_bin_spacing(spacing, phase).unwrap()).normalized().unwrap();
        let t = to_time(&g).unwrap();
        prop_assert!((t.norm_sq() - 1.0).abs() < 1e-9);
        let back = to_frequency(&t).unwrap();
        let scale = g.values.iter().map(|v| v.norm()).fold(0.0, f64::max);
        let err = g.values.iter().zip(back.values.iter()).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        prop_assert!(err < 1e-9 * scale);
    }

    #[test]
    fn hom_is_a_probability_and_even_for_symmetric_states(sigma in 0.2e12f64..1.0e12, range in 2e-12f64..40e-12) {
        let g = FrequencyGrid::new(TAU * 190e12, TAU * 4e12, 64).unwrap();
        let c = g.center();
        let w = g.omega_a().to_vec();
        let s = TAU * sigma;
        let values = Array2::from_shape_fn((64, 64), |(i, j)| {
            let (a, b) = (w[i] - c, w[j] - c);
            Complex64::new((-(a + b).powi(2) / (8.0 * s * s) - (a - b).powi(2) / (2.0 * s * s)).exp(), 0.0)
        });
        let f = JointAmplitude::new(g, values).unwrap().normalized().unwrap();
        let curve = hom_curve(&f, range, 41).unwrap();
        let p = &curve.probability;
        prop_assert!(p.iter().all(|v| (0.0..=1.0).contains(v)));
        for k in 0..p.len() {
            prop_assert!((p[k] - p[p.len() - 1 - k]).abs() < 1e-9);
        }
    }

    #[test]
    fn coincidence_matching_is_symmetric(
        a in prop::collection::vec(0.0f64..1e-6, 0..60),
        b in prop::collection::vec(0.0f64..1e-6, 0..60),
        window in 1e-9f64..50e-9,
    ) {
        let sort = |mut v: Vec<f64>| { v.sort_by(f64::total_cmp); v };
        let (a, b) = (sort(a), sort(b));
        let ab = match_pairs(&a, &b, window);
        let mut ba: Vec<(f64, f64)> = match_pairs(&b, &a, window).into_iter().map(|(x, y)| (y, x)).collect();
        ba.sort_by(|x, y| x.0.total_cmp(&y.0));
        prop_assert_eq!(&ab, &ba);
        prop_assert!(ab.iter().all(|(x, y)| (x - y).abs() <= 0.5 * window));
        prop_assert!(ab.len() <= a.len().min(b.len()));
    }

    #[test]
    fn dispersion_inverts_inside_band(offset_nm in -49.0f64..49.0, name in prop::sample::select(vec!["dcf-50km", "dcf-15km", "dcf-high"])) {
        let d = DispersionSpec::preset(name).unwrap();
        let omega = TAU * SPEED_OF_LIGHT / (d.lambda_ref + offset_nm * 1e-9);
        let t = freq_to_time(&d, omega).unwrap();
        let back = time_to_freq(&d, t).unwrap();
        prop_assert!((back / omega - 1.0).abs() < 1e-12);
    }

    #[test]
    fn event_records_round_trip(raw in prop::collection::vec((0u8..4, 0u8..3, 0u64..10_000_000_000_000), 0..50)) {
        let events: Vec<EventRecord> = raw
            .into_iter()
            .map(|(node, ch, ps)| EventRecord { node, channel: Channel::from_u8(ch).unwrap(), time: ps as f64 * 1e-12 })
            .collect();
        let mut bin = Vec::new();
        write_events_binary(&events, &mut bin).unwrap();
        prop_assert_eq!(bin.len(), 10 * events.len());
        let back = read_events_binary(bin.as_slice()).unwrap();
        let mut csv = Vec::new();
        write_events_csv(&events, &mut csv).unwrap();
        let back_csv = read_events_csv(csv.as_slice()).unwrap();
        for (e, (x, y)) in events.iter().zip(back.iter().zip(&back_csv)) {
            prop_assert_eq!((e.node, e.channel), (x.node, x.channel));
            prop_assert!((e.time - x.time).abs() < 0.5e-12 && (e.time - y.time).abs() < 0.5e-12);
        }
    }

    #[test]
    fn cosine_comb_spacing_is_recovered(period in 12.0f64..60.0, phase in 0.0f64..TAU) {
        let n = 2048;
        let axis: Vec<f64> = (0..n).map(|k| 190e12 + 1e9 * k as f64).collect();
        let profile: Vec<f64> = (0..n)
            .map(|k| {
                let x = (k as f64 - n as f64 / 2.0) / (n as f64 / 4.0);
                (-x * x).exp() * (1.0 + (TAU * k as f64 / period + phase).cos())
            })
            .collect();
        let r = detect_bins(&profile, &axis, -10.0).unwrap();
        let spacing = r.spacing_hz.unwrap();
        prop_assert!((spacing / (period * 1e9) - 1.0).abs() < 0.01, "{} vs {}", spacing, period * 1e9);
    }

    #[test]
    fn config_round_trips(
        seed in 0u64..u64::MAX,
        delay in -100.0f64..100.0,
        phase in -3.1f64..3.1,
        threshold in -30.0f64..-1.0,
        referenced in any::<bool>(),
    ) {
        let text = format!(
            "pipeline = netsim\nseed = {seed}\n[synthesis]\ndelay_h_ps = {delay}\nphase_rad = {phase}\n\
             [analysis]\nthreshold_db = {threshold}\n[network]\nreferenced = {referenced}\n"
        );
        let cfg = parse_config(&text).unwrap();
        prop_assert_eq!(cfg.synthesis.delay_h_ps, Some(delay));
        let again = parse_config(&serialize_config(&cfg)).unwrap();
        prop_assert_eq!(cfg, again);
    }
}
