//! Command-line front end: JSON config ingestion, scenario execution, CSV and
//! JSON outputs, and a minimal SVG fringe plot.
//!
//! Exit codes used by callers: 0 success, 2 config error, 3 numerical
//! failure, 4 output write failure.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt;
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::experiment::{
    background_subtract, calibrate_unitary, fit_cosine, generalized_scheme_check,
    measure_background, run_phase_scan, simulate_blocked_rates, CalibrationOptions,
    CalibrationSetup, CalibrationTargets, CountsRecord, FitResult, GeneralizedCheckOptions,
    ScanConfig, ScanMode, ScanResult,
};
use crate::fock::{ModeSpace, OccupationBasisState, SparseStateVector};
use crate::network::{
    add_multiplex_layer, build_disjoint_scheme, dilate_with_loss, DetectorLayout,
    InterferometerSpec, LossModel,
};
use crate::observables::{
    a_operator_expectation, click_distribution, four_point_closed_form, k_point_correlator,
    threshold_series_expectation, CorrelatorSpec,
};
use crate::sources::{PhaseSetting, SourceId, SourceKind, SpdcSource};

/// Parses an angle in radians, accepting `pi` literals: `pi`, `-pi/2`,
/// `3pi/4`, `0.25pi`, `1.5708`, `2*pi`.
pub fn parse_angle(text: &str) -> Result<f64> {
    let compact: String = text.chars().filter(|c| !c.is_whitespace()).collect();
    let (sign, body) = match compact.strip_prefix('-') {
        Some(rest) => (-1.0, rest),
        None => (1.0, compact.as_str()),
    };
    let bad = || Error::config(format!("cannot parse angle {text:?}"));
    if let Some(idx) = body.find("pi") {
        let (pre, post) = (&body[..idx], &body[idx + 2..]);
        let coeff = if pre.is_empty() {
            1.0
        } else {
            pre.trim_end_matches('*').parse::<f64>().map_err(|_| bad())?
        };
        let denom = if post.is_empty() {
            1.0
        } else {
            let d = post.strip_prefix('/').ok_or_else(bad)?;
            let d: f64 = d.parse().map_err(|_| bad())?;
            if d == 0.0 {
                return Err(bad());
            }
            d
        };
        Ok(sign * coeff * PI / denom)
    } else {
        body.parse::<f64>().map(|v| sign * v).map_err(|_| bad())
    }
}

/// Radian value that deserializes from a JSON number or a `pi`-literal string
/// and serializes back as the plain number.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Angle(pub f64);

impl Serialize for Angle {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.serialize_f64(self.0)
    }
}

impl<'de> Deserialize<'de> for Angle {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        struct AngleVisitor;
        impl serde::de::Visitor<'_> for AngleVisitor {
            type Value = Angle;
            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                write!(f, "a number or a string with pi literals")
            }
            fn visit_f64<E: serde::de::Error>(self, v: f64) -> std::result::Result<Angle, E> {
                Ok(Angle(v))
            }
            fn visit_i64<E: serde::de::Error>(self, v: i64) -> std::result::Result<Angle, E> {
                Ok(Angle(v as f64))
            }
            fn visit_u64<E: serde::de::Error>(self, v: u64) -> std::result::Result<Angle, E> {
                Ok(Angle(v as f64))
            }
            fn visit_str<E: serde::de::Error>(self, v: &str) -> std::result::Result<Angle, E> {
                parse_angle(v).map(Angle).map_err(E::custom)
            }
        }
        deserializer.deserialize_any(AngleVisitor)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau_per_watt: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pump_power_watts: Option<f64>,
    pub rep_rate_hz: f64,
}

impl SourceConfig {
    fn build(&self, kind: SourceKind, label: &str) -> Result<SpdcSource> {
        match (self.gamma, self.tau_per_watt, self.pump_power_watts) {
            (Some(gamma), None, None) => SpdcSource::from_gamma(gamma, self.rep_rate_hz, kind),
            (None, Some(tau), Some(power)) => {
                SpdcSource::from_pump(tau, power, self.rep_rate_hz, kind)
            }
            _ => Err(Error::config(format!(
                "{label}: specify exactly one of `gamma` or (`tau_per_watt`, `pump_power_watts`)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourcesConfig {
    pub source1: SourceConfig,
    pub source2: SourceConfig,
    #[serde(default = "default_truncation")]
    pub truncation: u32,
}

fn default_truncation() -> u32 {
    3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    pub splitting_ratios: Vec<f64>,
    #[serde(default = "default_unit_losses")]
    pub input_losses: Vec<f64>,
    #[serde(default = "default_unit_losses")]
    pub output_losses: Vec<f64>,
    #[serde(default = "default_true")]
    pub multiplex: bool,
    #[serde(default = "default_rejection")]
    pub rejection_threshold: usize,
}

fn default_unit_losses() -> Vec<f64> {
    vec![1.0; 4]
}

fn default_true() -> bool {
    true
}

fn default_rejection() -> usize {
    4
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScanSection {
    pub chi: Angle,
    #[serde(default = "default_zero_angle")]
    pub theta: Angle,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub varphi_grid: Option<Vec<Angle>>,
    #[serde(default = "default_points")]
    pub varphi_points: usize,
    #[serde(default = "default_range")]
    pub varphi_range: (Angle, Angle),
    #[serde(default = "default_integration")]
    pub integration_time_s: f64,
    #[serde(default = "default_repetitions")]
    pub repetitions: u32,
}

fn default_zero_angle() -> Angle {
    Angle(0.0)
}

fn default_points() -> usize {
    31
}

fn default_range() -> (Angle, Angle) {
    (Angle(-PI / 2.0), Angle(3.0 * PI / 2.0))
}

fn default_integration() -> f64 {
    60.0
}

fn default_repetitions() -> u32 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum ModeSection {
    Expectation,
    Sampled { seed: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputsConfig {
    pub directory: PathBuf,
    #[serde(default)]
    pub svg: bool,
}

/// Top-level run configuration; unknown keys are rejected everywhere.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub sources: SourcesConfig,
    pub network: NetworkConfig,
    pub scan: ScanSection,
    pub mode: ModeSection,
    pub outputs: OutputsConfig,
}

impl RunConfig {
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read config {}: {e}", path.display())))?;
        let config: RunConfig = serde_json::from_str(&text)
            .map_err(|e| Error::config(format!("invalid config {}: {e}", path.display())))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.network.splitting_ratios.len() != 2 {
            return Err(Error::config("network.splitting_ratios must have 2 entries"));
        }
        if self.network.input_losses.len() != 4 || self.network.output_losses.len() != 4 {
            return Err(Error::config(
                "network.input_losses and output_losses must have 4 entries each",
            ));
        }
        self.scan_config().and_then(|c| c.validate())?;
        Ok(())
    }

    pub fn build_sources(&self) -> Result<(SpdcSource, SpdcSource)> {
        let chi = self.scan.chi.0;
        let theta = self.scan.theta.0;
        let s1 = self
            .sources
            .source1
            .build(SourceKind::Entangled { chi }, "source1")?;
        let s2 = self.sources.source2.build(
            SourceKind::Separable {
                varphi: 0.0,
                theta,
            },
            "source2",
        )?;
        Ok((s1, s2))
    }

    pub fn build_network(&self) -> Result<(InterferometerSpec, DetectorLayout)> {
        let base = build_disjoint_scheme(4, &self.network.splitting_ratios)?;
        let mut transmissions = self.network.input_losses.clone();
        transmissions.extend_from_slice(&self.network.output_losses);
        let mut spec = dilate_with_loss(&base, &LossModel::new(transmissions)?)?;
        if self.network.multiplex {
            spec = add_multiplex_layer(&spec)?;
        }
        let layout = spec.detector_layout(self.network.rejection_threshold);
        Ok((spec, layout))
    }

    pub fn scan_config(&self) -> Result<ScanConfig> {
        let varphi_grid = match &self.scan.varphi_grid {
            Some(grid) => grid.iter().map(|a| a.0).collect(),
            None => {
                let (lo, hi) = self.scan.varphi_range;
                ScanConfig::open_grid(self.scan.varphi_points, lo.0, hi.0)
            }
        };
        Ok(ScanConfig {
            chi: self.scan.chi.0,
            theta: self.scan.theta.0,
            varphi_grid,
            integration_time: self.scan.integration_time_s,
            repetitions: self.scan.repetitions,
            truncation: self.sources.truncation,
        })
    }

    pub fn scan_mode(&self) -> ScanMode {
        match self.mode {
            ModeSection::Expectation => ScanMode::Expectation,
            ModeSection::Sampled { seed } => ScanMode::Sampled { seed },
        }
    }

    fn calibration_setup(&self) -> Result<CalibrationSetup> {
        let (source1, source2) = self.build_sources()?;
        Ok(CalibrationSetup {
            source1,
            source2,
            setting: PhaseSetting::new(self.scan.chi.0, 0.0, self.scan.theta.0),
            truncation: self.sources.truncation,
            multiplex: self.network.multiplex,
            rejection_threshold: self.network.rejection_threshold,
        })
    }
}

/// Writes a file atomically: temp file in the target directory plus rename.
pub fn atomic_write(path: &Path, contents: &str) -> Result<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, contents).map_err(|e| Error::io(tmp.display().to_string(), e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(())
}

fn format_value(v: f64) -> String {
    format!("{v:.11e}")
}

/// Renders a scan as CSV with the fixed column order
/// `varphi_rad, collective_phase_rad, singles_A..D, twofold_AB..CD,
/// threefold_ABC..BCD, fourfold_ABCD`, 12 significant digits.
pub fn render_scan_csv(scan: &ScanResult) -> String {
    let mut out = String::from(
        "varphi_rad,collective_phase_rad,singles_A,singles_B,singles_C,singles_D,\
         twofold_AB,twofold_AC,twofold_AD,twofold_BC,twofold_BD,twofold_CD,\
         threefold_ABC,threefold_ABD,threefold_ACD,threefold_BCD,fourfold_ABCD\n",
    );
    let combos = CountsRecord::combo_order(4);
    for point in &scan.points {
        let mut row = vec![
            format_value(point.varphi),
            format_value(point.collective_phase),
        ];
        for combo in &combos {
            let combo_usize: Vec<usize> = combo.iter().map(|&c| c as usize).collect();
            row.push(format_value(
                point.counts.get(&combo_usize).unwrap_or(f64::NAN),
            ));
        }
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

#[derive(Debug, Serialize)]
struct FitSummary {
    #[serde(rename = "A")]
    a: f64,
    #[serde(rename = "B")]
    b: f64,
    delta_rad: f64,
    visibility: f64,
    residual_norm: f64,
    n_points: usize,
}

impl From<&FitResult> for FitSummary {
    fn from(fit: &FitResult) -> Self {
        Self {
            a: fit.offset,
            b: fit.amplitude,
            delta_rad: fit.phase_offset,
            visibility: fit.visibility,
            residual_norm: fit.residual_norm,
            n_points: fit.n_points,
        }
    }
}

/// Minimal SVG fringe plot: data points plus the fitted cosine.
pub fn render_fringe_svg(points: &[(f64, f64)], fit: &FitResult, title: &str) -> String {
    let (width, height) = (640.0, 420.0);
    let (left, right, top, bottom) = (70.0, 610.0, 40.0, 370.0);
    let (x_min, x_max) = points
        .iter()
        .fold((f64::MAX, f64::MIN), |acc, p| (acc.0.min(p.0), acc.1.max(p.0)));
    let y_data_max = points.iter().fold(f64::MIN, |a, p| a.max(p.1));
    let y_data_min = points.iter().fold(f64::MAX, |a, p| a.min(p.1));
    let y_max = (y_data_max + 0.08 * y_data_max.abs().max(1e-12)).max(1e-12);
    let y_min = y_data_min.min(0.0);
    let x_of = |p: f64| left + (p - x_min) / (x_max - x_min) * (right - left);
    let y_of = |v: f64| bottom - (v - y_min) / (y_max - y_min) * (bottom - top);

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" \
         viewBox=\"0 0 {width} {height}\">\n"
    ));
    svg.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"24\" font-family=\"sans-serif\" font-size=\"15\" \
         text-anchor=\"middle\">{title}</text>\n",
        0.5 * (left + right)
    ));
    svg.push_str(&format!(
        "<line x1=\"{left}\" y1=\"{bottom}\" x2=\"{right}\" y2=\"{bottom}\" stroke=\"black\"/>\n"
    ));
    svg.push_str(&format!(
        "<line x1=\"{left}\" y1=\"{top}\" x2=\"{left}\" y2=\"{bottom}\" stroke=\"black\"/>\n"
    ));
    for frac in [0.0, 0.5, 1.0] {
        let phase = x_min + frac * (x_max - x_min);
        let x = x_of(phase);
        svg.push_str(&format!(
            "<text x=\"{x:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"12\" \
             text-anchor=\"middle\">{phase:.2}</text>\n",
            bottom + 18.0
        ));
        let value = y_min + frac * (y_max - y_min);
        let y = y_of(value);
        svg.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{y:.1}\" font-family=\"sans-serif\" font-size=\"12\" \
             text-anchor=\"end\">{value:.3e}</text>\n",
            left - 8.0
        ));
    }
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"13\" \
         text-anchor=\"middle\">collective phase (rad)</text>\n",
        0.5 * (left + right),
        bottom + 38.0
    ));
    let curve: Vec<String> = (0..=200)
        .map(|i| {
            let phase = x_min + i as f64 / 200.0 * (x_max - x_min);
            let value = fit.offset + fit.amplitude * (phase - fit.phase_offset).cos();
            format!("{:.2},{:.2}", x_of(phase), y_of(value))
        })
        .collect();
    svg.push_str(&format!(
        "<polyline points=\"{}\" fill=\"none\" stroke=\"#c0392b\" stroke-width=\"1.5\"/>\n",
        curve.join(" ")
    ));
    for &(phase, value) in points {
        svg.push_str(&format!(
            "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"3.2\" fill=\"#2c3e90\"/>\n",
            x_of(phase),
            y_of(value)
        ));
    }
    svg.push_str("</svg>\n");
    svg
}

/// `predict`: closed-form fringe value, no simulation.
pub fn cmd_predict(chi: f64, varphi: f64, theta: f64) -> Result<()> {
    let setting = PhaseSetting::new(chi, varphi, theta);
    println!("chi_rad               {}", format_value(chi));
    println!("varphi_rad            {}", format_value(varphi));
    println!("theta_rad             {}", format_value(theta));
    println!(
        "collective_phase_rad  {}",
        format_value(setting.collective_phase())
    );
    println!(
        "fourfold_correlator   {}",
        format_value(four_point_closed_form(&setting))
    );
    Ok(())
}

fn ensure_output_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))
}

/// `scan`: main scan plus both backgrounds, corrected data, fits, and the
/// optional SVG plot. With `blocked`, only that single-source background scan
/// is run and written.
pub fn cmd_scan(config_path: &Path, blocked: Option<u8>) -> Result<()> {
    let config = RunConfig::from_path(config_path)?;
    let (source1, source2) = config.build_sources()?;
    let (spec, layout) = config.build_network()?;
    let scan_config = config.scan_config()?;
    let mode = config.scan_mode();
    let dir = &config.outputs.directory;
    ensure_output_dir(dir)?;

    if let Some(which) = blocked {
        let id = match which {
            1 => SourceId::Source1,
            2 => SourceId::Source2,
            _ => return Err(Error::config("--blocked accepts 1 or 2")),
        };
        let bg = measure_background(&scan_config, &source1, &source2, &spec, &layout, mode, id)?;
        let path = dir.join(format!("background_block_source{which}.csv"));
        atomic_write(&path, &render_scan_csv(&bg))?;
        println!("wrote {}", path.display());
        return Ok(());
    }

    let main = run_phase_scan(&scan_config, &source1, &source2, &spec, &layout, mode)?;
    let bg1 = measure_background(
        &scan_config,
        &source1,
        &source2,
        &spec,
        &layout,
        mode,
        SourceId::Source1,
    )?;
    let bg2 = measure_background(
        &scan_config,
        &source1,
        &source2,
        &spec,
        &layout,
        mode,
        SourceId::Source2,
    )?;
    let corrected = background_subtract(&main, &bg1, &bg2)?;

    for (name, scan) in [
        ("scan_main.csv", &main),
        ("background_block_source1.csv", &bg1),
        ("background_block_source2.csv", &bg2),
        ("scan_corrected.csv", &corrected),
    ] {
        let path = dir.join(name);
        atomic_write(&path, &render_scan_csv(scan))?;
        println!("wrote {}", path.display());
    }

    let fourfold = [0usize, 1, 2, 3];
    let raw_fit = fit_cosine(&main.series(&fourfold))?;
    let corrected_fit = fit_cosine(&corrected.series(&fourfold))?;
    let summary_path = dir.join("fit_summary.json");
    atomic_write(
        &summary_path,
        &serde_json::to_string_pretty(&FitSummary::from(&corrected_fit)).expect("serializable"),
    )?;
    let raw_path = dir.join("fit_raw.json");
    atomic_write(
        &raw_path,
        &serde_json::to_string_pretty(&FitSummary::from(&raw_fit)).expect("serializable"),
    )?;
    println!("wrote {}", summary_path.display());
    println!("wrote {}", raw_path.display());
    println!(
        "raw fourfold visibility       {:.4}",
        raw_fit.visibility
    );
    println!(
        "corrected fourfold visibility {:.4}",
        corrected_fit.visibility
    );

    if config.outputs.svg {
        let svg = render_fringe_svg(
            &corrected.series(&fourfold),
            &corrected_fit,
            "background-corrected four-fold coincidences",
        );
        let path = dir.join("fringe.svg");
        atomic_write(&path, &svg)?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn combo_name(combo: &[u8]) -> String {
    combo.iter().map(|&c| (b'A' + c) as char).collect()
}

fn parse_targets_record(map: &BTreeMap<String, f64>, label: &str) -> Result<CountsRecord> {
    let combos = CountsRecord::combo_order(4);
    let expected: Vec<String> = combos.iter().map(|c| combo_name(c)).collect();
    for key in map.keys() {
        if !expected.contains(key) {
            return Err(Error::config(format!(
                "{label}: unknown counter {key:?} (expected channel combinations A..ABCD)"
            )));
        }
    }
    let mut values = Vec::with_capacity(combos.len());
    for name in &expected {
        let value = map.get(name).ok_or_else(|| {
            Error::config(format!("{label}: missing counter {name:?}"))
        })?;
        if !value.is_finite() {
            return Err(Error::config(format!(
                "{label}: counter {name:?} is not finite"
            )));
        }
        values.push(*value);
    }
    Ok(CountsRecord::from_values(&combos, &values))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct TargetsFile {
    blocked_source1: BTreeMap<String, f64>,
    blocked_source2: BTreeMap<String, f64>,
}

#[derive(Debug, Serialize)]
struct CalibrationReport {
    eta_in: Vec<f64>,
    eta_out: Vec<f64>,
    splitting_ratios: Vec<f64>,
    objective_value: f64,
    iterations: usize,
    residuals: BTreeMap<String, BTreeMap<String, f64>>,
}

/// `calibrate`: recovers the ten network parameters from single-source rates.
/// The config's network section provides the initial guess.
pub fn cmd_calibrate(targets_path: &Path, config_path: &Path) -> Result<()> {
    let config = RunConfig::from_path(config_path)?;
    let text = std::fs::read_to_string(targets_path).map_err(|e| {
        Error::config(format!("cannot read targets {}: {e}", targets_path.display()))
    })?;
    let parsed: TargetsFile = serde_json::from_str(&text).map_err(|e| {
        Error::config(format!("invalid targets {}: {e}", targets_path.display()))
    })?;
    let targets = CalibrationTargets {
        blocked_source1: parse_targets_record(&parsed.blocked_source1, "blocked_source1")?,
        blocked_source2: parse_targets_record(&parsed.blocked_source2, "blocked_source2")?,
    };

    let setup = config.calibration_setup()?;
    let mut initial = config.network.input_losses.clone();
    initial.extend_from_slice(&config.network.output_losses);
    initial.extend_from_slice(&config.network.splitting_ratios);
    let mut bounds = vec![(0.3, 1.0); 8];
    bounds.extend_from_slice(&[(0.4, 0.6), (0.4, 0.6)]);

    let result = calibrate_unitary(
        &setup,
        &targets,
        &initial,
        &bounds,
        &CalibrationOptions::default(),
    )?;

    let simulated = simulate_blocked_rates(&setup, &result.parameters())?;
    let mut residuals = BTreeMap::new();
    for (label, sim, target) in [
        (
            "blocked_source1",
            &simulated.blocked_source1,
            &targets.blocked_source1,
        ),
        (
            "blocked_source2",
            &simulated.blocked_source2,
            &targets.blocked_source2,
        ),
    ] {
        let per: BTreeMap<String, f64> = sim
            .iter()
            .zip(target.iter())
            .map(|((combo, s), (_, t))| (combo_name(combo), s - t))
            .collect();
        residuals.insert(label.to_string(), per);
    }
    let report = CalibrationReport {
        eta_in: result.eta[..4].to_vec(),
        eta_out: result.eta[4..].to_vec(),
        splitting_ratios: result.splitting_ratios.clone(),
        objective_value: result.objective_value,
        iterations: result.iterations,
        residuals,
    };
    ensure_output_dir(&config.outputs.directory)?;
    let path = config.outputs.directory.join("calibration.json");
    atomic_write(
        &path,
        &serde_json::to_string_pretty(&report).expect("serializable"),
    )?;
    println!("wrote {}", path.display());
    println!("objective {:.6e} after {} iterations", result.objective_value, result.iterations);
    Ok(())
}

/// `check-n`: the N-particle generalization report.
pub fn cmd_check_n(n_particles: usize, grid_points: usize, budget: usize) -> Result<()> {
    let report = generalized_scheme_check(
        n_particles,
        &GeneralizedCheckOptions {
            grid_points,
            budget,
        },
    )?;
    println!("particles                  {}", report.n_particles);
    println!(
        "n_point_visibility         {}",
        format_value(report.n_point_visibility())
    );
    println!(
        "n_point_minimum            {}",
        format_value(report.n_point_minimum)
    );
    println!(
        "n_point_maximum            {}",
        format_value(report.n_point_maximum)
    );
    println!(
        "fitted_phase_offset_rad    {}",
        format_value(report.n_point_fit.phase_offset)
    );
    println!(
        "max_lower_order_deviation  {}",
        format_value(report.max_lower_order_deviation)
    );
    Ok(())
}

/// Random normalized state with every basis term holding at most
/// `max_photons` photons over the given space.
pub fn random_bounded_state(
    space: ModeSpace,
    max_photons: u32,
    terms: usize,
    rng: &mut ChaCha8Rng,
) -> SparseStateVector {
    let modes = space.combined_modes();
    let mut collected = Vec::with_capacity(terms);
    for _ in 0..terms {
        let total = rng.random_range(1..=max_photons);
        let mut occ = vec![0u8; modes];
        for _ in 0..total {
            occ[rng.random_range(0..modes)] += 1;
        }
        let amp = Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        collected.push((OccupationBasisState::new(occ), amp));
    }
    SparseStateVector::from_terms(space, collected).normalized()
}

/// Random state with exactly `photons` photons in every basis term.
pub fn random_fixed_photon_state(
    space: ModeSpace,
    photons: u32,
    terms: usize,
    rng: &mut ChaCha8Rng,
) -> SparseStateVector {
    let modes = space.combined_modes();
    let mut collected = Vec::with_capacity(terms);
    for _ in 0..terms {
        let mut occ = vec![0u8; modes];
        for _ in 0..photons {
            occ[rng.random_range(0..modes)] += 1;
        }
        let amp = Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        collected.push((OccupationBasisState::new(occ), amp));
    }
    SparseStateVector::from_terms(space, collected).normalized()
}

/// `oracle`: cross-checks the exchange-operator identities and the truncated
/// threshold expansions on random inputs; returns whether all checks passed.
pub fn cmd_oracle(seed: u64, trials: usize) -> Result<bool> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let space = ModeSpace::new(4, 2);
    let mut all_ok = true;
    let mut report = |name: &str, worst: f64, tol: f64| {
        let ok = worst <= tol;
        all_ok &= ok;
        println!(
            "{:<44} max|dev| = {:.3e}  tol = {:.1e}  {}",
            name,
            worst,
            tol,
            if ok { "ok" } else { "FAIL" }
        );
    };

    let mut worst_cyclic: f64 = 0.0;
    let mut worst_const: f64 = 0.0;
    let mut worst_decomp: f64 = 0.0;
    let spec = build_disjoint_scheme(4, &[0.5, 0.5])?;
    for _ in 0..trials {
        let setting = PhaseSetting::new(
            rng.random_range(-PI..PI),
            rng.random_range(-PI..PI),
            rng.random_range(-PI..PI),
        );
        let input = crate::sources::build_input_state(&setting, 1, 1, space)?;
        let cyclic = a_operator_expectation(&input, &[0, 1, 2, 3], &[1, 0, 3, 2])?;
        let expected = 0.25 * (1.0 + setting.collective_phase().cos());
        worst_cyclic = worst_cyclic
            .max((cyclic.re - expected).abs())
            .max(cyclic.im.abs());

        let pair_a = a_operator_expectation(&input, &[0, 1, 2, 3], &[0, 1, 3, 2])?;
        let pair_b = a_operator_expectation(&input, &[0, 1, 2, 3], &[1, 0, 2, 3])?;
        let diag = a_operator_expectation(&input, &[0, 1, 2, 3], &[0, 1, 2, 3])?;
        worst_const = worst_const
            .max((pair_a - Complex64::new(0.5, 0.0)).norm())
            .max((pair_b - Complex64::new(0.5, 0.0)).norm())
            .max((diag - Complex64::new(1.0, 0.0)).norm());

        let output = crate::fock::apply_network(&input, &spec)?;
        let correlator =
            k_point_correlator(&output, &CorrelatorSpec::new(vec![0, 1, 2, 3])?)?;
        let decomposition = 0.25 * (diag.re - pair_a.re - pair_b.re + cyclic.re);
        worst_decomp = worst_decomp.max((correlator - decomposition).abs());
    }
    report(
        "A_{1234,2143} vs (1/4)(1 + cos collective)",
        worst_cyclic,
        1e-10,
    );
    report("A pair exchanges = 1/2, diagonal = 1", worst_const, 1e-10);
    report("correlator vs A-operator decomposition", worst_decomp, 1e-10);

    let plain = build_disjoint_scheme(4, &[1.0, 1.0])?;
    let layout = plain.detector_layout(4);
    let mut worst_series: f64 = 0.0;
    let mut worst_identity: f64 = 0.0;
    for _ in 0..trials {
        let state = random_bounded_state(space, 4, 5, &mut rng);
        let dist = click_distribution(&state, &layout)?;
        let channels = [0usize, 2, 3];
        let exact = dist.threshold_probability(&channels);
        let series = threshold_series_expectation(&state, &channels, 4)?;
        worst_series = worst_series.max((series - exact).abs());

        let four = random_fixed_photon_state(space, 4, 5, &mut rng);
        let series4 = threshold_series_expectation(&four, &[0, 1, 2, 3], 4)?;
        let correlator =
            k_point_correlator(&four, &CorrelatorSpec::new(vec![0, 1, 2, 3])?)?;
        worst_identity = worst_identity.max((series4 - correlator).abs());
    }
    report(
        "threshold series vs exact click probability",
        worst_series,
        1e-9,
    );
    report(
        "M1 M2 M3 M4 = N1 N2 N3 N4 on 4-photon states",
        worst_identity,
        1e-12,
    );
    Ok(all_ok)
}

/// Maps an error to the process exit code.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Io { .. } => 4,
        Error::NonFiniteObjective(_) | Error::DegenerateFit | Error::InsufficientFitData => 3,
        _ => 2,
    }
}
