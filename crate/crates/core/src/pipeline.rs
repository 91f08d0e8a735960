//! Run configuration and the four commands: `benchmark`, `echo`, `tomo`, `sweep`.
//!
//! A command reads one [`RunConfig`], writes its CSV (and optionally SVG)
//! outputs into `output_dir`, and returns a report with the same numbers.
//! Every CSV written here has a matching reader.

use std::fs::{self, File};
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::benchmark::{
    benchmark_curve, f_class_unit_efficiency, log_grid, write_curve_csv, BenchmarkPoint, SINGLE_PHOTON_FIDELITY,
};
use crate::detection::{
    build_histogram, run_counts, write_counts_csv, ChannelParams, CountRecord, PreparedInput, Sampling, TimeHistogram,
};
use crate::error::{invalid, Error, Result};
use crate::exec::{map_slice, Execution};
use crate::memory::{propagate_pulse, MemoryParams, PulseShape};
use crate::plot::{Chart, Series, Style};
use crate::polarization::{MeasurementSetting, StateLabel};
use crate::rng::{derive_seed, domain};
use crate::table::sig12;
use crate::tomography::{analyze, fit_fringe, write_fringe_csv, BootstrapOptions, FringeFit, TomographyResult};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SourceConfig {
    /// Relative-phase error of the state preparation (rad), applied to every input.
    pub prep_phase_error_rad: f64,
    pub sampling: Sampling,
}

impl Default for SourceConfig {
    fn default() -> Self {
        SourceConfig {
            prep_phase_error_rad: 0.0,
            sampling: Sampling::Stochastic,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TomoConfig {
    pub mu: f64,
    pub resamples: usize,
    pub tech_sigma: f64,
}

impl Default for TomoConfig {
    fn default() -> Self {
        TomoConfig {
            mu: 0.4,
            resamples: 200,
            tech_sigma: crate::tomography::DEFAULT_TECH_SIGMA,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FringeConfig {
    /// HWP angles per scan, evenly covering one period; 0 skips the scans.
    pub angles: usize,
    pub shots: u64,
    pub resamples: usize,
}

impl Default for FringeConfig {
    fn default() -> Self {
        FringeConfig {
            angles: 24,
            shots: 1_000_000,
            resamples: 200,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EchoConfig {
    pub mu: f64,
    pub shots: u64,
    pub pulse_fwhm_s: f64,
    pub grid_dt_s: f64,
    /// Histogram bins; 0 means one bin per time-grid sample.
    pub bins: usize,
}

impl Default for EchoConfig {
    fn default() -> Self {
        EchoConfig {
            mu: 0.4,
            shots: 10_000_000,
            pulse_fwhm_s: 140e-9,
            grid_dt_s: 2e-9,
            bins: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub input_states: Vec<StateLabel>,
    pub eta_lines: Vec<f64>,
    pub resamples: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            input_states: vec![StateLabel::V, StateLabel::D, StateLabel::R],
            eta_lines: vec![0.10, 0.02],
            resamples: 100,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchmarkConfig {
    pub mu_min: f64,
    pub mu_max: f64,
    pub points: usize,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        BenchmarkConfig {
            mu_min: 1e-6,
            mu_max: 40.0,
            points: 241,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    /// Worker threads for the parallel loops; 0 uses every core.
    pub workers: usize,
    pub mu_list: Vec<f64>,
    pub input_states: Vec<StateLabel>,
    /// Analyzer settings used for tomography, by the state each one projects on.
    pub settings: Vec<StateLabel>,
    pub eta_lines: Vec<f64>,
    pub memory: MemoryParams,
    pub channel: ChannelParams,
    pub source: SourceConfig,
    pub tomo: TomoConfig,
    pub fringe: FringeConfig,
    pub echo: EchoConfig,
    pub sweep: SweepConfig,
    pub benchmark: BenchmarkConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 2011,
            output_dir: PathBuf::from("out"),
            workers: 0,
            mu_list: vec![0.01, 0.04, 0.1, 0.4, 1.0, 3.5, 10.0, 36.0],
            input_states: StateLabel::ALL.to_vec(),
            settings: StateLabel::ALL.to_vec(),
            eta_lines: vec![0.001, 0.01, 0.1, 0.25, 0.5, 1.0],
            memory: MemoryParams::default(),
            channel: ChannelParams::default(),
            source: SourceConfig::default(),
            tomo: TomoConfig::default(),
            fringe: FringeConfig::default(),
            echo: EchoConfig::default(),
            sweep: SweepConfig::default(),
            benchmark: BenchmarkConfig::default(),
        }
    }
}

fn config_err(e: impl std::fmt::Display) -> Error {
    Error::Config(e.to_string())
}

impl RunConfig {
    /// Parses TOML. Setting `memory.comb_spacing_hz` alone also sets the storage time to `1/Δ`.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let mut table: toml::Table = text.parse().map_err(config_err)?;
        if let Some(toml::Value::Table(mem)) = table.get_mut("memory") {
            if !mem.contains_key("storage_time_s") {
                if let Some(delta) = mem.get("comb_spacing_hz").and_then(|v| v.as_float().or(v.as_integer().map(|i| i as f64))) {
                    mem.insert("storage_time_s".into(), toml::Value::Float(1.0 / delta));
                }
            }
        }
        let cfg: RunConfig = toml::Value::Table(table).try_into().map_err(config_err)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(config_err)
    }

    /// Configuration with every noise source off and counts at their expectation.
    pub fn zero_noise(mut self) -> Self {
        self.memory.phase_noise_sigma_rad = 0.0;
        self.channel.dark_prob_per_window = 0.0;
        self.source.prep_phase_error_rad = 0.0;
        self.source.sampling = Sampling::Expected;
        self.tomo.tech_sigma = 0.0;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let wrap = |e: Error| Error::Config(e.to_string());
        self.memory.validate().map_err(wrap)?;
        self.channel.validate().map_err(wrap)?;
        if self.mu_list.is_empty() || self.mu_list.iter().any(|m| !(*m > 0.0) || !m.is_finite()) {
            return Err(Error::Config("mu_list must be non-empty with positive entries".into()));
        }
        if self.input_states.is_empty() || self.settings.is_empty() || self.sweep.input_states.is_empty() {
            return Err(Error::Config("input_states, settings and sweep.input_states must be non-empty".into()));
        }
        for eta in self.eta_lines.iter().chain(&self.sweep.eta_lines) {
            if !(*eta > 0.0 && *eta <= 1.0) {
                return Err(Error::Config(format!("benchmark efficiency {eta} outside (0, 1]")));
            }
        }
        if !(self.tomo.mu >= 0.0) || !(self.echo.mu >= 0.0) {
            return Err(Error::Config("mean photon numbers must be ≥ 0".into()));
        }
        if self.echo.shots == 0 || self.fringe.shots == 0 {
            return Err(Error::Config("shot counts must be at least 1".into()));
        }
        Ok(())
    }
}

fn create(dir: &Path, name: &str) -> Result<(BufWriter<File>, PathBuf)> {
    fs::create_dir_all(dir)?;
    let path = dir.join(name);
    Ok((BufWriter::new(File::create(&path)?), path))
}

fn check_header<R: Read>(rdr: &mut csv::Reader<R>, expected: &str) -> Result<()> {
    let got = rdr.headers()?.iter().collect::<Vec<_>>().join(",");
    if got != expected {
        return Err(invalid(format!("unexpected header '{got}', expected '{expected}'")));
    }
    Ok(())
}

// ---------------------------------------------------------------- benchmark

#[derive(Debug, Clone)]
pub struct BenchmarkReport {
    pub mu_grid: Vec<f64>,
    /// One curve per configured efficiency, in `eta_lines` order.
    pub curves: Vec<Vec<BenchmarkPoint>>,
    pub unit_efficiency: Vec<f64>,
    pub files: Vec<PathBuf>,
}

pub const REFERENCE_HEADER: &str = "mu,f_single_photon,f_class_unit";

pub fn read_reference_csv<R: Read>(r: R) -> Result<Vec<(f64, f64, f64)>> {
    let mut rdr = csv::Reader::from_reader(r);
    check_header(&mut rdr, REFERENCE_HEADER)?;
    rdr.deserialize().map(|row| row.map_err(Error::from)).collect()
}

pub fn cmd_benchmark(cfg: &RunConfig, plot: bool) -> Result<BenchmarkReport> {
    cfg.validate()?;
    let b = &cfg.benchmark;
    let grid = log_grid(b.mu_min, b.mu_max, b.points)?;
    let curves = cfg
        .eta_lines
        .iter()
        .map(|&eta| benchmark_curve(&grid, eta, Execution::Parallel))
        .collect::<Result<Vec<_>>>()?;
    let unit = map_slice(&grid, Execution::Parallel, |&mu| f_class_unit_efficiency(mu)).into_iter().collect::<Result<Vec<_>>>()?;

    let dir = &cfg.output_dir;
    let mut files = Vec::new();
    let (mut w, path) = create(dir, "benchmark.csv")?;
    write_curve_csv(&mut w, &curves.concat())?;
    w.flush()?;
    files.push(path);
    let (mut w, path) = create(dir, "benchmark_reference.csv")?;
    writeln!(w, "{REFERENCE_HEADER}")?;
    for (mu, f) in grid.iter().zip(&unit) {
        writeln!(w, "{},{},{}", sig12(*mu), sig12(SINGLE_PHOTON_FIDELITY), sig12(*f))?;
    }
    w.flush()?;
    files.push(path);

    if plot {
        let mut chart = Chart::new("Classical memory benchmark", "mean photon number μ", "maximum classical fidelity");
        chart.log_x = true;
        for (eta, curve) in cfg.eta_lines.iter().zip(&curves) {
            chart.series.push(Series::new(
                format!("η = {eta}"),
                curve.iter().map(|p| (p.mu, p.f_class)).collect(),
                Style::Line,
            ));
        }
        chart.series.push(Series::new(
            "2/3",
            vec![(grid[0], SINGLE_PHOTON_FIDELITY), (grid[grid.len() - 1], SINGLE_PHOTON_FIDELITY)],
            Style::Dashed,
        ));
        let path = dir.join("benchmark.svg");
        chart.write(&path)?;
        files.push(path);
    }
    Ok(BenchmarkReport {
        mu_grid: grid,
        curves,
        unit_efficiency: unit,
        files,
    })
}

// ---------------------------------------------------------------- echo

#[derive(Debug, Clone)]
pub struct EchoReport {
    pub echo_delay_s: Option<f64>,
    pub echo_efficiency: f64,
    pub afc: TimeHistogram,
    pub empty_pit: TimeHistogram,
    pub files: Vec<PathBuf>,
}

pub const ECHO_HEADER: &str = "t_ns,counts_afc,counts_empty_pit";

pub fn read_echo_csv<R: Read>(r: R) -> Result<(TimeHistogram, TimeHistogram)> {
    let mut rdr = csv::Reader::from_reader(r);
    check_header(&mut rdr, ECHO_HEADER)?;
    let mut t = Vec::new();
    let (mut a, mut b) = (Vec::new(), Vec::new());
    for row in rdr.deserialize() {
        let (t_ns, ca, cb): (f64, u64, u64) = row?;
        t.push(t_ns * 1e-9);
        a.push(ca);
        b.push(cb);
    }
    if t.len() < 2 {
        return Err(invalid("echo histogram needs at least two bins"));
    }
    let bin_s = (t[t.len() - 1] - t[0]) / (t.len() - 1) as f64;
    let t0_s = t[0] - 0.5 * bin_s;
    Ok((
        TimeHistogram { bin_s, t0_s, counts: a },
        TimeHistogram { bin_s, t0_s, counts: b },
    ))
}

pub fn cmd_echo(cfg: &RunConfig, plot: bool) -> Result<EchoReport> {
    cfg.validate()?;
    let e = &cfg.echo;
    let pulse = PulseShape::for_memory(&cfg.memory, e.pulse_fwhm_s, e.grid_dt_s)?;
    let afc = propagate_pulse(&pulse, &cfg.memory)?;
    let mut pit = cfg.memory;
    pit.peak_od = 0.0;
    let reference = propagate_pulse(&pulse, &pit)?;
    let ch = ChannelParams { shots: e.shots, ..cfg.channel };
    let bins = if e.bins == 0 { pulse.len() } else { e.bins };
    let h_afc = build_histogram(&afc.output, e.mu, &ch, derive_seed(cfg.seed, domain::HISTOGRAM, 0), bins)?;
    let h_pit = build_histogram(&reference.output, e.mu, &ch, derive_seed(cfg.seed, domain::HISTOGRAM, 1), bins)?;

    let dir = &cfg.output_dir;
    let mut files = Vec::new();
    let (mut w, path) = create(dir, "echo_histogram.csv")?;
    writeln!(w, "{ECHO_HEADER}")?;
    for k in 0..bins {
        writeln!(w, "{},{},{}", sig12(h_afc.bin_center(k) * 1e9), h_afc.counts[k], h_pit.counts[k])?;
    }
    w.flush()?;
    files.push(path);
    let (mut w, path) = create(dir, "echo_summary.json")?;
    serde_json::to_writer_pretty(
        &mut w,
        &serde_json::json!({
            "echo_delay_s": afc.echo_delay_s,
            "echo_efficiency": afc.echo_efficiency,
            "storage_time_s": cfg.memory.storage_time_s,
            "pulse_fwhm_s": e.pulse_fwhm_s,
            "bin_s": h_afc.bin_s,
        }),
    )?;
    writeln!(w)?;
    w.flush()?;
    files.push(path);

    if plot {
        let mut chart = Chart::new("Storage and retrieval, detection-time histogram", "time (ns)", "counts");
        let series = |h: &TimeHistogram| (0..bins).map(|k| (h.bin_center(k) * 1e9, h.counts[k] as f64)).collect();
        chart.series.push(Series::new("AFC", series(&h_afc), Style::Line));
        chart.series.push(Series::new("empty pit", series(&h_pit), Style::Dashed));
        let path = dir.join("echo.svg");
        chart.write(&path)?;
        files.push(path);
    }
    Ok(EchoReport {
        echo_delay_s: afc.echo_delay_s,
        echo_efficiency: afc.echo_efficiency,
        afc: h_afc,
        empty_pit: h_pit,
        files,
    })
}

// ---------------------------------------------------------------- tomo

#[derive(Debug, Clone)]
pub struct FringeScan {
    pub name: String,
    pub angles: Vec<f64>,
    pub records: Vec<CountRecord>,
    pub fit: FringeFit,
}

#[derive(Debug, Clone)]
pub struct TomoReport {
    pub records: Vec<CountRecord>,
    pub results: Vec<TomographyResult>,
    pub mean_fidelity: f64,
    pub mean_fidelity_err: f64,
    pub mean_dark_subtracted: f64,
    pub fringes: Vec<FringeScan>,
    pub files: Vec<PathBuf>,
}

pub const TOMO_TABLE_HEADER: &str =
    "input,fidelity_raw,fidelity_err,fidelity_dark_subtracted,rho_hh,rho_vv,rho_hv_re,rho_hv_im,loglik";

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct TomoTableRow {
    pub input: String,
    pub fidelity_raw: f64,
    pub fidelity_err: f64,
    pub fidelity_dark_subtracted: f64,
    pub rho_hh: f64,
    pub rho_vv: f64,
    pub rho_hv_re: f64,
    pub rho_hv_im: f64,
    pub loglik: f64,
}

pub fn read_tomo_table<R: Read>(r: R) -> Result<Vec<TomoTableRow>> {
    let mut rdr = csv::Reader::from_reader(r);
    check_header(&mut rdr, TOMO_TABLE_HEADER)?;
    rdr.deserialize().map(|row| row.map_err(Error::from)).collect()
}

pub const FRINGE_FITS_HEADER: &str = "scan,amplitude,visibility,phase_rad,visibility_err";

pub fn read_fringe_fits<R: Read>(r: R) -> Result<Vec<(String, FringeFit)>> {
    let mut rdr = csv::Reader::from_reader(r);
    check_header(&mut rdr, FRINGE_FITS_HEADER)?;
    rdr.deserialize()
        .map(|row| {
            let (name, amplitude, visibility, phase_rad, visibility_err): (String, f64, f64, f64, f64) = row?;
            Ok((
                name,
                FringeFit {
                    amplitude,
                    visibility,
                    phase_rad,
                    visibility_err,
                },
            ))
        })
        .collect()
}

/// Reads a fringe scan back as `(angle_rad, p_det, fit_p)` rows.
pub fn read_fringe_csv<R: Read>(r: R) -> Result<Vec<(f64, f64, f64)>> {
    let mut rdr = csv::Reader::from_reader(r);
    check_header(&mut rdr, "angle_deg,p_det,fit_p")?;
    rdr.deserialize()
        .map(|row| {
            let (deg, p, fit): (f64, f64, f64) = row?;
            Ok((deg.to_radians(), p, fit))
        })
        .collect()
}

fn prepared(cfg: &RunConfig, label: StateLabel) -> PreparedInput {
    PreparedInput::with_preparation_error(label, cfg.source.prep_phase_error_rad)
}

/// The analyzer fringe scans: V, D and R behind the bare HWP, and R with a QWP at 45°.
pub fn fringe_scans(cfg: &RunConfig) -> Result<Vec<FringeScan>> {
    let n = cfg.fringe.angles;
    if n == 0 {
        return Ok(Vec::new());
    }
    let angles: Vec<f64> = (0..n).map(|k| k as f64 * std::f64::consts::FRAC_PI_2 / n as f64).collect();
    let qwp = std::f64::consts::FRAC_PI_4;
    let plan: [(&str, StateLabel, bool); 4] = [
        ("V", StateLabel::V, false),
        ("D", StateLabel::D, false),
        ("R", StateLabel::R, false),
        ("R_qwp", StateLabel::R, true),
    ];
    let ch = ChannelParams {
        shots: cfg.fringe.shots,
        ..cfg.channel
    };
    plan.iter()
        .enumerate()
        .map(|(j, &(name, label, with_qwp))| {
            let settings: Vec<MeasurementSetting> = angles
                .iter()
                .map(|&th| if with_qwp { MeasurementSetting::qwp_hwp(qwp, th) } else { MeasurementSetting::hwp(th) })
                .collect();
            let records = run_counts(
                &[prepared(cfg, label)],
                &settings,
                cfg.tomo.mu,
                &cfg.memory,
                &ch,
                derive_seed(cfg.seed, domain::FRINGE, j as u64),
                cfg.source.sampling,
                Execution::Parallel,
            )?;
            let fit = fit_fringe(
                &angles,
                &records,
                cfg.fringe.resamples,
                derive_seed(cfg.seed, domain::FRINGE, 100 + j as u64),
            )?;
            Ok(FringeScan {
                name: name.to_string(),
                angles: angles.clone(),
                records,
                fit,
            })
        })
        .collect()
}

/// Simulates and reconstructs the configured inputs at `mu`; the shared core of `tomo` and `sweep`.
fn tomograph(cfg: &RunConfig, inputs: &[StateLabel], mu: f64, resamples: usize, seed: u64) -> Result<(Vec<CountRecord>, Vec<TomographyResult>)> {
    let prepared: Vec<PreparedInput> = inputs.iter().map(|&l| prepared(cfg, l)).collect();
    let settings: Vec<MeasurementSetting> = cfg.settings.iter().map(|&l| MeasurementSetting::canonical(l)).collect();
    let records = run_counts(
        &prepared,
        &settings,
        mu,
        &cfg.memory,
        &cfg.channel,
        derive_seed(seed, domain::TOMO, 0),
        cfg.source.sampling,
        Execution::Parallel,
    )?;
    let opts = BootstrapOptions {
        resamples,
        tech_sigma: cfg.tomo.tech_sigma,
    };
    let results = inputs
        .iter()
        .enumerate()
        .map(|(i, &label)| {
            let recs = &records[i * settings.len()..(i + 1) * settings.len()];
            analyze(
                label.as_str(),
                recs,
                &label.state(),
                &opts,
                derive_seed(seed, domain::BOOTSTRAP, i as u64),
                Execution::Parallel,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((records, results))
}

fn mean_with_err(values: &[f64], errs: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let err = errs.iter().map(|e| e * e).sum::<f64>().sqrt() / n;
    (mean, err)
}

pub fn cmd_tomo(cfg: &RunConfig, plot: bool) -> Result<TomoReport> {
    cfg.validate()?;
    let (records, results) = tomograph(cfg, &cfg.input_states, cfg.tomo.mu, cfg.tomo.resamples, cfg.seed)?;
    let raw: Vec<f64> = results.iter().map(|r| r.fidelity_raw).collect();
    let errs: Vec<f64> = results.iter().map(|r| r.fidelity_err).collect();
    let (mean_fidelity, mean_fidelity_err) = mean_with_err(&raw, &errs);
    let mean_dark_subtracted = results.iter().map(|r| r.fidelity_dark_subtracted).sum::<f64>() / results.len() as f64;
    let fringes = fringe_scans(cfg)?;

    let dir = &cfg.output_dir;
    let mut files = Vec::new();
    let (mut w, path) = create(dir, "tomo_counts.csv")?;
    write_counts_csv(&mut w, &records)?;
    w.flush()?;
    files.push(path);

    let (mut w, path) = create(dir, "tomo_table.csv")?;
    writeln!(w, "{TOMO_TABLE_HEADER}")?;
    for r in &results {
        let m = r.rho.matrix();
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{}",
            r.input,
            sig12(r.fidelity_raw),
            sig12(r.fidelity_err),
            sig12(r.fidelity_dark_subtracted),
            sig12(m.0[0][0].re),
            sig12(m.0[1][1].re),
            sig12(m.0[0][1].re),
            sig12(m.0[0][1].im),
            sig12(r.loglik)
        )?;
    }
    w.flush()?;
    files.push(path);

    let (mut w, path) = create(dir, "tomo_results.json")?;
    serde_json::to_writer_pretty(
        &mut w,
        &serde_json::json!({
            "mu": cfg.tomo.mu,
            "mean_fidelity": mean_fidelity,
            "mean_fidelity_err": mean_fidelity_err,
            "mean_fidelity_dark_subtracted": mean_dark_subtracted,
            "results": results,
            "fringes": fringes.iter().map(|f| serde_json::json!({"scan": f.name, "fit": f.fit})).collect::<Vec<_>>(),
        }),
    )?;
    writeln!(w)?;
    w.flush()?;
    files.push(path);

    if !fringes.is_empty() {
        let (mut w, path) = create(dir, "fringe_fits.csv")?;
        writeln!(w, "{FRINGE_FITS_HEADER}")?;
        for f in &fringes {
            writeln!(
                w,
                "{},{},{},{},{}",
                f.name,
                sig12(f.fit.amplitude),
                sig12(f.fit.visibility),
                sig12(f.fit.phase_rad),
                sig12(f.fit.visibility_err)
            )?;
        }
        w.flush()?;
        files.push(path);
        for f in &fringes {
            let (mut w, path) = create(dir, &format!("fringe_{}.csv", f.name))?;
            write_fringe_csv(&mut w, &f.angles, &f.records, &f.fit)?;
            w.flush()?;
            files.push(path);
        }
    }

    if plot {
        let mut chart = Chart::new("Conditional fidelity per input", "input index (H V D A R L)", "fidelity");
        chart.series.push(
            Series::new("raw", results.iter().enumerate().map(|(i, r)| (i as f64, r.fidelity_raw)).collect(), Style::Markers)
                .with_errors(errs.clone()),
        );
        chart.series.push(Series::new(
            "dark subtracted",
            results.iter().enumerate().map(|(i, r)| (i as f64 + 0.1, r.fidelity_dark_subtracted)).collect(),
            Style::Markers,
        ));
        let path = dir.join("tomo_fidelity.svg");
        chart.write(&path)?;
        files.push(path);
        if !fringes.is_empty() {
            let mut chart = Chart::new("Analyzer fringes", "HWP angle (deg)", "detection probability");
            for f in &fringes {
                chart.series.push(Series::new(
                    format!("{} V={:.3}", f.name, f.fit.visibility),
                    f.angles.iter().zip(&f.records).map(|(a, r)| (a.to_degrees(), r.rate())).collect(),
                    Style::Markers,
                ));
            }
            let path = dir.join("fringes.svg");
            chart.write(&path)?;
            files.push(path);
        }
    }
    Ok(TomoReport {
        records,
        results,
        mean_fidelity,
        mean_fidelity_err,
        mean_dark_subtracted,
        fringes,
        files,
    })
}

// ---------------------------------------------------------------- sweep

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub mu: f64,
    pub fidelity_raw: f64,
    pub fidelity_raw_err: f64,
    pub fidelity_dark_subtracted: f64,
    pub fidelity_dark_subtracted_err: f64,
}

#[derive(Debug, Clone)]
pub struct SweepReport {
    pub points: Vec<SweepPoint>,
    /// Benchmark at each swept μ for every `sweep.eta_lines` entry.
    pub benchmarks: Vec<(f64, Vec<BenchmarkPoint>)>,
    pub files: Vec<PathBuf>,
}

pub const SWEEP_HEADER: &str = "mu,series,value,err";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub mu: f64,
    pub series: String,
    pub value: f64,
    pub err: f64,
}

pub fn read_sweep_csv<R: Read>(r: R) -> Result<Vec<SweepRow>> {
    let mut rdr = csv::Reader::from_reader(r);
    check_header(&mut rdr, SWEEP_HEADER)?;
    rdr.deserialize().map(|row| row.map_err(Error::from)).collect()
}

pub fn benchmark_series_name(eta: f64) -> String {
    format!("f_class_eta_{eta}")
}

pub fn cmd_sweep(cfg: &RunConfig, plot: bool) -> Result<SweepReport> {
    cfg.validate()?;
    let jobs: Vec<(usize, f64)> = cfg.mu_list.iter().copied().enumerate().collect();
    let points = map_slice(&jobs, Execution::Parallel, |&(j, mu)| {
        let seed = derive_seed(cfg.seed, domain::SWEEP, j as u64);
        let (_, results) = tomograph(cfg, &cfg.sweep.input_states, mu, cfg.sweep.resamples, seed)?;
        let errs: Vec<f64> = results.iter().map(|r| r.fidelity_err).collect();
        let raw: Vec<f64> = results.iter().map(|r| r.fidelity_raw).collect();
        let sub: Vec<f64> = results.iter().map(|r| r.fidelity_dark_subtracted).collect();
        let (fidelity_raw, fidelity_raw_err) = mean_with_err(&raw, &errs);
        let (fidelity_dark_subtracted, fidelity_dark_subtracted_err) = mean_with_err(&sub, &errs);
        Ok(SweepPoint {
            mu,
            fidelity_raw,
            fidelity_raw_err,
            fidelity_dark_subtracted,
            fidelity_dark_subtracted_err,
        })
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let benchmarks = cfg
        .sweep
        .eta_lines
        .iter()
        .map(|&eta| Ok((eta, benchmark_curve(&cfg.mu_list, eta, Execution::Parallel)?)))
        .collect::<Result<Vec<_>>>()?;

    let dir = &cfg.output_dir;
    let mut files = Vec::new();
    let (mut w, path) = create(dir, "sweep.csv")?;
    writeln!(w, "{SWEEP_HEADER}")?;
    for (k, p) in points.iter().enumerate() {
        let mu = sig12(p.mu);
        writeln!(w, "{mu},fidelity_raw,{},{}", sig12(p.fidelity_raw), sig12(p.fidelity_raw_err))?;
        writeln!(
            w,
            "{mu},fidelity_dark_subtracted,{},{}",
            sig12(p.fidelity_dark_subtracted),
            sig12(p.fidelity_dark_subtracted_err)
        )?;
        for (eta, curve) in &benchmarks {
            writeln!(w, "{mu},{},{},0", benchmark_series_name(*eta), sig12(curve[k].f_class))?;
        }
        writeln!(w, "{mu},f_single_photon,{},0", sig12(SINGLE_PHOTON_FIDELITY))?;
    }
    w.flush()?;
    files.push(path);

    if plot {
        let mut chart = Chart::new("Average conditional fidelity vs μ", "mean photon number μ", "fidelity");
        chart.log_x = true;
        chart.series.push(
            Series::new("raw", points.iter().map(|p| (p.mu, p.fidelity_raw)).collect(), Style::Markers)
                .with_errors(points.iter().map(|p| p.fidelity_raw_err).collect()),
        );
        chart.series.push(
            Series::new(
                "dark subtracted",
                points.iter().map(|p| (p.mu, p.fidelity_dark_subtracted)).collect(),
                Style::Markers,
            )
            .with_errors(points.iter().map(|p| p.fidelity_dark_subtracted_err).collect()),
        );
        // benchmark lines on a fine grid for a smooth curve
        let lo = cfg.mu_list.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = cfg.mu_list.iter().copied().fold(0.0, f64::max);
        let fine = if hi > lo { log_grid(lo, hi, 120)? } else { vec![lo] };
        for &(eta, _) in &benchmarks {
            let curve = benchmark_curve(&fine, eta, Execution::Parallel)?;
            chart.series.push(Series::new(
                format!("classical η = {eta}"),
                curve.iter().map(|p| (p.mu, p.f_class)).collect(),
                Style::Line,
            ));
        }
        chart.series.push(Series::new(
            "2/3",
            vec![(lo, SINGLE_PHOTON_FIDELITY), (hi, SINGLE_PHOTON_FIDELITY)],
            Style::Dashed,
        ));
        let path = dir.join("sweep.svg");
        chart.write(&path)?;
        files.push(path);
    }
    Ok(SweepReport {
        points,
        benchmarks,
        files,
    })
}
