//! Run configuration: `[section]` headers, `key = value` lines, `#` comments.
//!
//! Presets are named bundles of key values applied before the explicit keys
//! of a file, so anything written explicitly wins. Serialization writes every
//! resolved key, which parses back to the same configuration.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::detection::{DetectorSpec, DispersionSpec, FWHM_PER_SIGMA};
use crate::error::{Error, Result};
use crate::network::{ClockModel, FiberLink};
use crate::spectral::{
    wavelength_to_omega, CrystalSpec, PhaseMatchModel, PumpShape, PumpSpectrum, SPEED_OF_LIGHT,
};
use crate::synthesis::{StageGeometry, SynthesisConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pipeline {
    Jsi,
    Jta,
    Schmidt,
    Hom,
    Tof,
    Netsim,
}

impl Pipeline {
    pub const ALL: [Pipeline; 6] =
        [Pipeline::Jsi, Pipeline::Jta, Pipeline::Schmidt, Pipeline::Hom, Pipeline::Tof, Pipeline::Netsim];

    pub fn name(self) -> &'static str {
        match self {
            Pipeline::Jsi => "jsi",
            Pipeline::Jta => "jta",
            Pipeline::Schmidt => "schmidt",
            Pipeline::Hom => "hom",
            Pipeline::Tof => "tof",
            Pipeline::Netsim => "netsim",
        }
    }
}

impl fmt::Display for Pipeline {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Pipeline {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Pipeline::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| format!("unknown pipeline {s:?} (expected jsi, jta, schmidt, hom, tof or netsim)"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSection {
    pub pipeline: Option<Pipeline>,
    pub preset: Vec<String>,
    pub seed: u64,
    pub output_dir: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceSection {
    pub pump_wavelength_nm: f64,
    pub pump_fwhm_nm: f64,
    pub pump_shape: String,
    pub crystal_length_mm: f64,
    pub poling_period_um: f64,
    pub temperature_c: Option<f64>,
    pub beta_mean_s_per_m: f64,
    pub beta_split_s_per_m: f64,
    pub delta_k0_rad_per_m: f64,
    /// CSV of tabulated wavevectors; replaces the linearized model.
    pub phase_match_table: Option<String>,
    pub grid_points: usize,
    pub grid_span_thz: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthesisSection {
    pub delay_h_ps: Option<f64>,
    pub delay_v_ps: Option<f64>,
    pub d1_um: Option<f64>,
    pub d2_um: Option<f64>,
    pub d3_nm: Option<f64>,
    /// Overrides the phase derived from `d3_nm`.
    pub phase_rad: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisSection {
    pub threshold_db: f64,
    pub schmidt_threshold: f64,
    pub schmidt_points: usize,
    pub schmidt_span_thz: f64,
    pub bin_points: usize,
    pub bins_per_side: usize,
    pub hom_points: usize,
    pub hom_range_ps: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionSection {
    pub detector: String,
    pub efficiency: Option<f64>,
    pub jitter_fwhm_ps: Option<f64>,
    pub dark_rate_hz: Option<f64>,
    pub dead_time_ns: f64,
    pub dispersion: String,
    pub dispersion_ps_per_nm: Option<f64>,
    pub lambda_ref_nm: Option<f64>,
    pub pair_rate_hz: f64,
    pub duration_s: f64,
    pub window_ns: f64,
    pub tof_points: usize,
    pub tof_source_points: usize,
    pub write_events: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSection {
    pub local_dispersion: String,
    pub sync_jitter_ps: f64,
    pub remote_offset_ns: f64,
    pub remote_drift: f64,
    pub random_walk: f64,
    pub referenced: bool,
    pub link_length_m: f64,
    pub link_loss_db: f64,
    pub link_dispersion_ps_per_nm_km: f64,
    pub bin_width_ps: f64,
    pub window_ns: f64,
    pub gross_delay_ns: Option<f64>,
    pub duration_s: f64,
    pub source_span_thz: f64,
    pub source_points: usize,
    pub write_events: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub run: RunSection,
    pub source: SourceSection,
    pub synthesis: SynthesisSection,
    pub analysis: AnalysisSection,
    pub detection: DetectionSection,
    pub network: NetworkSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            run: RunSection { pipeline: None, preset: Vec::new(), seed: 0, output_dir: "out".into() },
            source: SourceSection {
                pump_wavelength_nm: 792.0,
                pump_fwhm_nm: 0.2,
                pump_shape: "gaussian".into(),
                crystal_length_mm: 40.0,
                poling_period_um: 21.5,
                temperature_c: Some(42.0),
                beta_mean_s_per_m: crate::spectral::DEFAULT_BETA_MEAN,
                beta_split_s_per_m: crate::spectral::DEFAULT_BETA_SPLIT,
                delta_k0_rad_per_m: 0.0,
                phase_match_table: None,
                grid_points: crate::spectral::DEFAULT_GRID_POINTS,
                grid_span_thz: crate::spectral::DEFAULT_GRID_SPAN_HZ * 1e-12,
            },
            synthesis: SynthesisSection {
                delay_h_ps: None,
                delay_v_ps: None,
                d1_um: None,
                d2_um: None,
                d3_nm: None,
                phase_rad: None,
            },
            analysis: AnalysisSection {
                threshold_db: -10.0,
                schmidt_threshold: 1e-3,
                schmidt_points: 512,
                schmidt_span_thz: 6.0,
                bin_points: 128,
                bins_per_side: 2,
                hom_points: 1201,
                hom_range_ps: None,
            },
            detection: DetectionSection {
                detector: "snspd-system".into(),
                efficiency: None,
                jitter_fwhm_ps: None,
                dark_rate_hz: None,
                dead_time_ns: 0.0,
                dispersion: "dcf-50km".into(),
                dispersion_ps_per_nm: None,
                lambda_ref_nm: None,
                pair_rate_hz: crate::detection::PairSource::reference_pair_rate(),
                duration_s: 0.5,
                window_ns: 3.0,
                tof_points: 256,
                tof_source_points: 512,
                write_events: true,
            },
            network: NetworkSection {
                local_dispersion: "dcf-15km".into(),
                sync_jitter_ps: 28.0,
                remote_offset_ns: 0.0,
                remote_drift: 0.0,
                random_walk: 0.0,
                referenced: true,
                link_length_m: 1300.0,
                link_loss_db: 0.0,
                link_dispersion_ps_per_nm_km: 17.0,
                bin_width_ps: 30.0,
                window_ns: 12.0,
                gross_delay_ns: None,
                duration_s: 5.2,
                source_span_thz: 5.8,
                source_points: 2048,
                write_events: true,
            },
        }
    }
}

trait ConfigValue: Sized {
    fn parse_value(raw: &str) -> std::result::Result<Self, String>;
    fn format_value(&self) -> String;
}

impl ConfigValue for f64 {
    fn parse_value(raw: &str) -> std::result::Result<Self, String> {
        let v: f64 = raw.parse().map_err(|_| format!("expected a number, found {raw:?}"))?;
        if !v.is_finite() {
            return Err(format!("expected a finite number, found {raw:?}"));
        }
        Ok(v)
    }

    fn format_value(&self) -> String {
        // both forms are shortest round-trip representations
        let plain = format!("{self}");
        let sci = format!("{self:e}");
        if plain.len() <= sci.len() {
            plain
        } else {
            sci
        }
    }
}

impl ConfigValue for usize {
    fn parse_value(raw: &str) -> std::result::Result<Self, String> {
        raw.parse().map_err(|_| format!("expected a non-negative integer, found {raw:?}"))
    }

    fn format_value(&self) -> String {
        self.to_string()
    }
}

impl ConfigValue for u64 {
    fn parse_value(raw: &str) -> std::result::Result<Self, String> {
        raw.parse().map_err(|_| format!("expected a non-negative integer, found {raw:?}"))
    }

    fn format_value(&self) -> String {
        self.to_string()
    }
}

impl ConfigValue for bool {
    fn parse_value(raw: &str) -> std::result::Result<Self, String> {
        match raw {
            "true" | "yes" | "on" | "1" => Ok(true),
            "false" | "no" | "off" | "0" => Ok(false),
            _ => Err(format!("expected true or false, found {raw:?}")),
        }
    }

    fn format_value(&self) -> String {
        self.to_string()
    }
}

impl ConfigValue for String {
    fn parse_value(raw: &str) -> std::result::Result<Self, String> {
        if raw.is_empty() {
            return Err("expected a value".into());
        }
        Ok(raw.to_string())
    }

    fn format_value(&self) -> String {
        self.clone()
    }
}

impl ConfigValue for Pipeline {
    fn parse_value(raw: &str) -> std::result::Result<Self, String> {
        raw.parse()
    }

    fn format_value(&self) -> String {
        self.name().to_string()
    }
}

impl ConfigValue for Vec<String> {
    fn parse_value(raw: &str) -> std::result::Result<Self, String> {
        Ok(raw.split(',').map(str::trim).filter(|s| !s.is_empty()).map(String::from).collect())
    }

    fn format_value(&self) -> String {
        self.join(", ")
    }
}

impl<T: ConfigValue> ConfigValue for Option<T> {
    fn parse_value(raw: &str) -> std::result::Result<Self, String> {
        if raw == "none" {
            Ok(None)
        } else {
            T::parse_value(raw).map(Some)
        }
    }

    fn format_value(&self) -> String {
        self.as_ref().map_or_else(|| "none".to_string(), T::format_value)
    }
}

macro_rules! config_fields {
    ($( $section:literal . $key:literal => $($field:ident).+ ;)*) => {
        /// Every accepted `(section, key)` pair.
        pub const KEYS: &[(&str, &str)] = &[$(($section, $key)),*];

        fn set_field(cfg: &mut RunConfig, section: &str, key: &str, raw: &str) -> Option<std::result::Result<(), String>> {
            match (section, key) {
                $( ($section, $key) => Some(ConfigValue::parse_value(raw).map(|v| cfg.$($field).+ = v)), )*
                _ => None,
            }
        }

        fn field_entries(cfg: &RunConfig) -> Vec<(&'static str, &'static str, String)> {
            vec![$( ($section, $key, cfg.$($field).+.format_value()) ),*]
        }
    };
}

config_fields! {
    "run"."pipeline" => run.pipeline;
    "run"."preset" => run.preset;
    "run"."seed" => run.seed;
    "run"."output_dir" => run.output_dir;
    "source"."pump_wavelength_nm" => source.pump_wavelength_nm;
    "source"."pump_fwhm_nm" => source.pump_fwhm_nm;
    "source"."pump_shape" => source.pump_shape;
    "source"."crystal_length_mm" => source.crystal_length_mm;
    "source"."poling_period_um" => source.poling_period_um;
    "source"."temperature_c" => source.temperature_c;
    "source"."beta_mean_s_per_m" => source.beta_mean_s_per_m;
    "source"."beta_split_s_per_m" => source.beta_split_s_per_m;
    "source"."delta_k0_rad_per_m" => source.delta_k0_rad_per_m;
    "source"."phase_match_table" => source.phase_match_table;
    "source"."grid_points" => source.grid_points;
    "source"."grid_span_thz" => source.grid_span_thz;
    "synthesis"."delay_h_ps" => synthesis.delay_h_ps;
    "synthesis"."delay_v_ps" => synthesis.delay_v_ps;
    "synthesis"."d1_um" => synthesis.d1_um;
    "synthesis"."d2_um" => synthesis.d2_um;
    "synthesis"."d3_nm" => synthesis.d3_nm;
    "synthesis"."phase_rad" => synthesis.phase_rad;
    "analysis"."threshold_db" => analysis.threshold_db;
    "analysis"."schmidt_threshold" => analysis.schmidt_threshold;
    "analysis"."schmidt_points" => analysis.schmidt_points;
    "analysis"."schmidt_span_thz" => analysis.schmidt_span_thz;
    "analysis"."bin_points" => analysis.bin_points;
    "analysis"."bins_per_side" => analysis.bins_per_side;
    "analysis"."hom_points" => analysis.hom_points;
    "analysis"."hom_range_ps" => analysis.hom_range_ps;
    "detection"."detector" => detection.detector;
    "detection"."efficiency" => detection.efficiency;
    "detection"."jitter_fwhm_ps" => detection.jitter_fwhm_ps;
    "detection"."dark_rate_hz" => detection.dark_rate_hz;
    "detection"."dead_time_ns" => detection.dead_time_ns;
    "detection"."dispersion" => detection.dispersion;
    "detection"."dispersion_ps_per_nm" => detection.dispersion_ps_per_nm;
    "detection"."lambda_ref_nm" => detection.lambda_ref_nm;
    "detection"."pair_rate_hz" => detection.pair_rate_hz;
    "detection"."duration_s" => detection.duration_s;
    "detection"."window_ns" => detection.window_ns;
    "detection"."tof_points" => detection.tof_points;
    "detection"."tof_source_points" => detection.tof_source_points;
    "detection"."write_events" => detection.write_events;
    "network"."local_dispersion" => network.local_dispersion;
    "network"."sync_jitter_ps" => network.sync_jitter_ps;
    "network"."remote_offset_ns" => network.remote_offset_ns;
    "network"."remote_drift" => network.remote_drift;
    "network"."random_walk" => network.random_walk;
    "network"."referenced" => network.referenced;
    "network"."link_length_m" => network.link_length_m;
    "network"."link_loss_db" => network.link_loss_db;
    "network"."link_dispersion_ps_per_nm_km" => network.link_dispersion_ps_per_nm_km;
    "network"."bin_width_ps" => network.bin_width_ps;
    "network"."window_ns" => network.window_ns;
    "network"."gross_delay_ns" => network.gross_delay_ns;
    "network"."duration_s" => network.duration_s;
    "network"."source_span_thz" => network.source_span_thz;
    "network"."source_points" => network.source_points;
    "network"."write_events" => network.write_events;
}

/// A named bundle of settings.
#[derive(Debug, Clone, Copy)]
pub struct Preset {
    pub name: &'static str,
    pub description: &'static str,
    /// `(section.key, value, note)`; the note records where the value comes from.
    pub values: &'static [(&'static str, &'static str, &'static str)],
}

const REPORTED: &str = "reported value";
const CHOSEN: &str = "chosen setting";
const COMPUTED: &str = "computed from reported values";

pub const PRESETS: &[Preset] = &[
    Preset {
        name: "paper-fig2a",
        description: "single pass, no interference",
        values: &[
            ("run.pipeline", "jsi", CHOSEN),
            ("synthesis.delay_h_ps", "0", CHOSEN),
            ("synthesis.delay_v_ps", "0", CHOSEN),
        ],
    },
    Preset {
        name: "paper-fig2b",
        description: "mirror displacements of +-100 um, 1.33 ps separation",
        values: &[
            ("run.pipeline", "jsi", CHOSEN),
            ("synthesis.d1_um", "100", REPORTED),
            ("synthesis.d2_um", "-100", REPORTED),
        ],
    },
    Preset {
        name: "paper-fig2c",
        description: "mirror displacements of +-500 um, 6.67 ps separation",
        values: &[
            ("run.pipeline", "jsi", CHOSEN),
            ("synthesis.d1_um", "500", REPORTED),
            ("synthesis.d2_um", "-500", REPORTED),
        ],
    },
    Preset {
        name: "paper-fig2d",
        description: "10 ps separation, 100 GHz bins",
        values: &[
            ("run.pipeline", "jsi", CHOSEN),
            ("synthesis.delay_h_ps", "5", REPORTED),
            ("synthesis.delay_v_ps", "-5", REPORTED),
        ],
    },
    Preset {
        name: "paper-fig2e",
        description: "20 ps separation, 50 GHz bins",
        values: &[
            ("run.pipeline", "jsi", CHOSEN),
            ("synthesis.delay_h_ps", "10", REPORTED),
            ("synthesis.delay_v_ps", "-10", REPORTED),
        ],
    },
    Preset {
        name: "paper-fig2f",
        description: "40 ps separation, 25 GHz bins",
        values: &[
            ("run.pipeline", "jsi", CHOSEN),
            ("synthesis.delay_h_ps", "20", REPORTED),
            ("synthesis.delay_v_ps", "-20", REPORTED),
            ("source.grid_span_thz", "6.4", CHOSEN),
        ],
    },
    Preset {
        name: "paper-fig2g",
        description: "80 ps separation, 12.5 GHz bins",
        values: &[
            ("run.pipeline", "jsi", CHOSEN),
            ("synthesis.delay_h_ps", "40", REPORTED),
            ("synthesis.delay_v_ps", "-40", REPORTED),
            ("source.grid_span_thz", "3.2", CHOSEN),
        ],
    },
    Preset {
        name: "paper-fig3a",
        description: "100 GHz bins with a pi phase from a 198 nm path change",
        values: &[
            ("run.pipeline", "jsi", CHOSEN),
            ("synthesis.delay_h_ps", "5", REPORTED),
            ("synthesis.delay_v_ps", "-5", REPORTED),
            ("synthesis.d3_nm", "198", COMPUTED),
        ],
    },
    Preset {
        name: "paper-fig3b",
        description: "two-photon interference of 50 GHz bins",
        values: &[
            ("run.pipeline", "hom", CHOSEN),
            ("synthesis.delay_h_ps", "10", REPORTED),
            ("synthesis.delay_v_ps", "-10", REPORTED),
            ("synthesis.phase_rad", "0", REPORTED),
        ],
    },
    Preset {
        name: "paper-fig3c",
        description: "two-photon interference of 100 GHz bins, zero phase",
        values: &[
            ("run.pipeline", "hom", CHOSEN),
            ("synthesis.delay_h_ps", "5", REPORTED),
            ("synthesis.delay_v_ps", "-5", REPORTED),
            ("synthesis.phase_rad", "0", REPORTED),
        ],
    },
    Preset {
        name: "paper-fig3d",
        description: "two-photon interference of 100 GHz bins, pi phase",
        values: &[
            ("run.pipeline", "hom", CHOSEN),
            ("synthesis.delay_h_ps", "5", REPORTED),
            ("synthesis.delay_v_ps", "-5", REPORTED),
            ("synthesis.phase_rad", "3.141592653589793", REPORTED),
        ],
    },
    Preset {
        name: "paper-fig5a",
        description: "two-node distribution without modulation",
        values: &[
            ("run.pipeline", "netsim", CHOSEN),
            ("synthesis.delay_h_ps", "0", CHOSEN),
            ("synthesis.delay_v_ps", "0", CHOSEN),
            ("detection.detector", "snspd", REPORTED),
            ("network.local_dispersion", "dcf-15km", COMPUTED),
            ("network.sync_jitter_ps", "28", REPORTED),
            ("network.bin_width_ps", "30", REPORTED),
            ("network.link_length_m", "1300", REPORTED),
        ],
    },
    Preset {
        name: "paper-fig5b",
        description: "two-node distribution of 290 GHz bins",
        values: &[
            ("run.pipeline", "netsim", CHOSEN),
            ("synthesis.delay_h_ps", "1.7241379310344827", COMPUTED),
            ("synthesis.delay_v_ps", "-1.7241379310344827", COMPUTED),
            ("detection.detector", "snspd", REPORTED),
            ("network.local_dispersion", "dcf-15km", COMPUTED),
            ("network.sync_jitter_ps", "28", REPORTED),
            ("network.bin_width_ps", "30", REPORTED),
            ("network.link_length_m", "1300", REPORTED),
        ],
    },
    Preset {
        name: "paper-fig5c",
        description: "two-node distribution of 98 GHz bins",
        values: &[
            ("run.pipeline", "netsim", CHOSEN),
            ("synthesis.delay_h_ps", "5.1020408163265305", COMPUTED),
            ("synthesis.delay_v_ps", "-5.1020408163265305", COMPUTED),
            ("detection.detector", "snspd", REPORTED),
            ("network.local_dispersion", "dcf-15km", COMPUTED),
            ("network.sync_jitter_ps", "28", REPORTED),
            ("network.bin_width_ps", "30", REPORTED),
            ("network.link_length_m", "1300", REPORTED),
        ],
    },
    Preset {
        name: "snspd",
        description: "superconducting detectors, 80 ps jitter",
        values: &[("detection.detector", "snspd", REPORTED)],
    },
    Preset {
        name: "snspd-system",
        description: "superconducting detectors with the 130 ps total system jitter",
        values: &[("detection.detector", "snspd-system", REPORTED)],
    },
    Preset {
        name: "ideal-detector",
        description: "lossless, jitter-free detectors",
        values: &[("detection.detector", "ideal", CHOSEN)],
    },
    Preset { name: "dcf-50km", description: "-895 ps/nm module", values: &[("detection.dispersion", "dcf-50km", REPORTED)] },
    Preset {
        name: "dcf-15km",
        description: "-268.5 ps/nm module",
        values: &[("detection.dispersion", "dcf-15km", COMPUTED)],
    },
    Preset {
        name: "dcf-high",
        description: "three times the 50 km module",
        values: &[("detection.dispersion", "dcf-high", CHOSEN)],
    },
];

pub fn find_preset(name: &str) -> Option<&'static Preset> {
    PRESETS.iter().find(|p| p.name == name)
}

struct Entry<'a> {
    line: usize,
    section: &'a str,
    key: &'a str,
    value: &'a str,
}

fn config_error(line: usize, msg: impl Into<String>) -> Error {
    Error::Config { line, msg: msg.into() }
}

fn tokenize(text: &str) -> Result<Vec<Entry<'_>>> {
    let mut section = "run";
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = n + 1;
        let body = raw.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        if let Some(rest) = body.strip_prefix('[') {
            let name = rest
                .strip_suffix(']')
                .ok_or_else(|| config_error(line, format!("malformed section header {body:?}")))?
                .trim();
            if !KEYS.iter().any(|(s, _)| *s == name) {
                return Err(config_error(line, format!("unknown section [{name}]")));
            }
            section = KEYS.iter().find(|(s, _)| *s == name).map(|(s, _)| *s).unwrap_or("run");
            continue;
        }
        let (key, value) = body
            .split_once('=')
            .ok_or_else(|| config_error(line, format!("expected key = value, found {body:?}")))?;
        out.push(Entry { line, section, key: key.trim(), value: value.trim() });
    }
    Ok(out)
}

fn apply(cfg: &mut RunConfig, line: usize, section: &str, key: &str, value: &str) -> Result<()> {
    match set_field(cfg, section, key, value) {
        Some(Ok(())) => Ok(()),
        Some(Err(msg)) => Err(config_error(line, format!("{section}.{key}: {msg}"))),
        None => Err(config_error(line, format!("unknown key {key:?} in [{section}]"))),
    }
}

fn apply_preset(cfg: &mut RunConfig, name: &str, line: usize) -> Result<()> {
    let preset = find_preset(name).ok_or_else(|| config_error(line, format!("unknown preset {name:?}")))?;
    for (path, value, _) in preset.values {
        let (section, key) = path.split_once('.').expect("preset keys are section.key");
        apply(cfg, line, section, key, value)?;
    }
    Ok(())
}

/// Parses a configuration, returning it with any warnings.
///
/// `extra_presets` are applied after those named in the text; the CLI uses
/// this for `--preset`.
pub fn parse_config_with_warnings(text: &str, extra_presets: &[String]) -> Result<(RunConfig, Vec<String>)> {
    let entries = tokenize(text)?;
    let mut cfg = RunConfig::default();
    let mut warnings = Vec::new();
    let mut presets: Vec<(String, usize)> = Vec::new();
    for e in entries.iter().filter(|e| e.section == "run" && e.key == "preset") {
        let names = Vec::<String>::parse_value(e.value).map_err(|m| config_error(e.line, m))?;
        presets.extend(names.into_iter().map(|n| (n, e.line)));
    }
    let last_line = text.lines().count();
    presets.extend(extra_presets.iter().map(|n| (n.clone(), last_line)));
    for (name, line) in &presets {
        apply_preset(&mut cfg, name, *line)?;
    }
    for e in entries.iter().filter(|e| !(e.section == "run" && e.key == "preset")) {
        apply(&mut cfg, e.line, e.section, e.key, e.value)?;
    }
    let mut names: Vec<String> = Vec::new();
    for (n, _) in presets {
        if !names.contains(&n) {
            names.push(n);
        }
    }
    cfg.run.preset = names;
    if cfg.run.pipeline.is_none() {
        return Err(config_error(last_line, "missing pipeline (set pipeline = jsi|jta|schmidt|hom|tof|netsim)"));
    }
    let s = &mut cfg.synthesis;
    if (s.delay_h_ps.is_some() || s.delay_v_ps.is_some()) && (s.d1_um.is_some() || s.d2_um.is_some()) {
        warnings.push("both delays and mirror displacements are set; the displacements are ignored".to_string());
        s.d1_um = None;
        s.d2_um = None;
    }
    cfg.validate().map_err(|e| config_error(last_line, e.to_string()))?;
    Ok((cfg, warnings))
}

pub fn parse_config(text: &str) -> Result<RunConfig> {
    parse_config_with_warnings(text, &[]).map(|(c, _)| c)
}

/// Writes every key; parsing the result reproduces the configuration.
pub fn serialize_config(cfg: &RunConfig) -> String {
    let mut out = String::new();
    let mut current = "";
    for (section, key, value) in field_entries(cfg) {
        if section != current {
            if !current.is_empty() {
                out.push('\n');
            }
            out.push_str(&format!("[{section}]\n"));
            current = section;
        }
        out.push_str(&format!("{key} = {value}\n"));
    }
    out
}

impl RunConfig {
    pub fn pipeline(&self) -> Result<Pipeline> {
        self.run.pipeline.ok_or_else(|| config_error(0, "missing pipeline"))
    }

    pub fn validate(&self) -> Result<()> {
        self.pump()?;
        self.crystal()?.validate()?;
        self.synthesis()?;
        self.detector()?;
        self.dispersion()?;
        self.local_dispersion()?;
        self.clocks()?.1.validate()?;
        self.link().validate()?;
        let s = &self.source;
        if s.grid_points < 8 || !(s.grid_span_thz > 0.0) {
            return Err(Error::InvalidInput("grid needs at least 8 points and a positive span".into()));
        }
        Ok(())
    }

    pub fn pump(&self) -> Result<PumpSpectrum> {
        let shape = match self.source.pump_shape.as_str() {
            "gaussian" => PumpShape::Gaussian,
            "sech2" => PumpShape::Sech2,
            other => return Err(Error::InvalidInput(format!("unknown pump shape {other:?}"))),
        };
        if !(self.source.pump_wavelength_nm > 0.0) || !(self.source.pump_fwhm_nm > 0.0) {
            return Err(Error::InvalidInput("pump wavelength and bandwidth must be positive".into()));
        }
        Ok(PumpSpectrum::from_wavelength(
            self.source.pump_wavelength_nm * 1e-9,
            self.source.pump_fwhm_nm * 1e-9,
            shape,
        ))
    }

    /// Degenerate signal/idler angular frequency.
    pub fn degenerate_omega(&self) -> f64 {
        0.5 * wavelength_to_omega(self.source.pump_wavelength_nm * 1e-9)
    }

    pub fn crystal(&self) -> Result<CrystalSpec> {
        let s = &self.source;
        let center = self.degenerate_omega();
        let model = match &s.phase_match_table {
            Some(path) => PhaseMatchModel::from_csv_file(std::path::Path::new(path))?,
            None => PhaseMatchModel::Linearized {
                delta_k0: s.delta_k0_rad_per_m,
                beta_h: s.beta_mean_s_per_m + 0.5 * s.beta_split_s_per_m,
                beta_v: s.beta_mean_s_per_m - 0.5 * s.beta_split_s_per_m,
                center,
            },
        };
        Ok(CrystalSpec {
            length: s.crystal_length_mm * 1e-3,
            poling_period: s.poling_period_um * 1e-6,
            temperature_c: s.temperature_c,
            model,
        })
    }

    pub fn synthesis(&self) -> Result<SynthesisConfig> {
        let s = &self.synthesis;
        let pump_wavelength = self.source.pump_wavelength_nm * 1e-9;
        let mut cfg = if s.delay_h_ps.is_some() || s.delay_v_ps.is_some() {
            let mut c = SynthesisConfig::new(s.delay_h_ps.unwrap_or(0.0) * 1e-12, s.delay_v_ps.unwrap_or(0.0) * 1e-12, 0.0)?;
            if let Some(d3) = s.d3_nm {
                let geometry = StageGeometry { d1: 0.0, d2: 0.0, d3: d3 * 1e-9 };
                c.phase = crate::synthesis::phase_from_path(&geometry, pump_wavelength)?;
            }
            c
        } else {
            let geometry = StageGeometry {
                d1: s.d1_um.unwrap_or(0.0) * 1e-6,
                d2: s.d2_um.unwrap_or(0.0) * 1e-6,
                d3: s.d3_nm.unwrap_or(0.0) * 1e-9,
            };
            SynthesisConfig::from_geometry(&geometry, pump_wavelength)?
        };
        cfg.pump_wavelength = pump_wavelength;
        if let Some(phase) = s.phase_rad {
            cfg.phase = crate::synthesis::wrap_phase(phase);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn detector(&self) -> Result<DetectorSpec> {
        let d = &self.detection;
        let base = DetectorSpec::preset(&d.detector)
            .ok_or_else(|| Error::InvalidInput(format!("unknown detector preset {:?}", d.detector)))?;
        DetectorSpec::new(
            d.efficiency.unwrap_or(base.efficiency),
            d.jitter_fwhm_ps.map_or(base.jitter, |j| j * 1e-12 / FWHM_PER_SIGMA),
            d.dark_rate_hz.unwrap_or(base.dark_rate),
            d.dead_time_ns * 1e-9,
        )
    }

    fn named_dispersion(name: &str) -> Result<DispersionSpec> {
        DispersionSpec::preset(name).ok_or_else(|| Error::InvalidInput(format!("unknown dispersion preset {name:?}")))
    }

    /// Spectrometer module for the time-of-flight pipeline.
    pub fn dispersion(&self) -> Result<DispersionSpec> {
        let d = &self.detection;
        let base = Self::named_dispersion(&d.dispersion)?;
        DispersionSpec::new(
            d.dispersion_ps_per_nm.map_or(base.dispersion, |v| v * 1e-3),
            d.lambda_ref_nm.map_or(base.lambda_ref, |v| v * 1e-9),
            base.base_delay,
        )
    }

    /// Local module of the two-node pipeline.
    pub fn local_dispersion(&self) -> Result<DispersionSpec> {
        Self::named_dispersion(&self.network.local_dispersion)
    }

    pub fn link(&self) -> FiberLink {
        let n = &self.network;
        FiberLink {
            length: n.link_length_m,
            dispersion: n.link_dispersion_ps_per_nm_km * 1e-12 / 1e-9 / 1e3,
            loss_db: n.link_loss_db,
            ..FiberLink::default()
        }
    }

    /// `(local, remote)` clocks. The local node shares the pulse reference;
    /// its timestamps still carry the synchronization jitter.
    pub fn clocks(&self) -> Result<(ClockModel, ClockModel)> {
        let n = &self.network;
        let jitter = n.sync_jitter_ps * 1e-12;
        let local = ClockModel { jitter, referenced: n.referenced, ..ClockModel::ideal() };
        let remote = ClockModel {
            offset: n.remote_offset_ns * 1e-9,
            drift: n.remote_drift,
            jitter,
            random_walk: n.random_walk,
            referenced: n.referenced,
        };
        local.validate()?;
        remote.validate()?;
        Ok((local, remote))
    }

    /// Single-photon wavelength at degeneracy.
    pub fn degenerate_wavelength(&self) -> f64 {
        std::f64::consts::TAU * SPEED_OF_LIGHT / self.degenerate_omega()
    }
}
