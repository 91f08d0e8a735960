//! Weak-coherent-state detection pipeline.
//!
//! A coherent pulse of mean photon number `μ` that reaches a
//! non-number-resolving detector with overall transmission `τ` clicks with
//! probability `1 − e^{−μτ}`. Dark counts are an independent click chance
//! per detection window, so
//!
//! ```text
//! p_click = 1 − (1 − p_dark) · exp(−μ · η_t · η_d · s · q)
//! ```
//!
//! where `s` is the memory survival and `q` the analyzer projection of the
//! retrieved state.

use std::io::{Read, Write};

use rand_distr::{Binomial, Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::exec::{map_range, Execution};
use crate::memory::{store_and_retrieve_parametric, MemoryParams, PulseShape};
use crate::polarization::{MeasurementSetting, Port, PureQubit, StateLabel, WaveplateSetting};
use crate::rng::{domain, substream, SimRng};
use crate::table::sig12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelParams {
    /// Transmission from the memory input to the detector.
    pub eta_t: f64,
    /// Detector efficiency.
    pub eta_d: f64,
    pub dark_prob_per_window: f64,
    pub window_s: f64,
    pub rep_rate_hz: f64,
    pub shots: u64,
    /// Extra transmission factor of the ND filter inserted for bright pulses.
    pub nd_attenuation: f64,
    /// The ND filter is in place when `μ` exceeds this value.
    pub nd_threshold_mu: f64,
}

impl Default for ChannelParams {
    fn default() -> Self {
        ChannelParams {
            eta_t: 0.40,
            eta_d: 0.50,
            dark_prob_per_window: 5e-5,
            window_s: 400e-9,
            rep_rate_hz: 5e4,
            shots: 100_000,
            nd_attenuation: 0.1,
            nd_threshold_mu: 1.0,
        }
    }
}

impl ChannelParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("eta_t", self.eta_t),
            ("eta_d", self.eta_d),
            ("nd_attenuation", self.nd_attenuation),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(invalid(format!("{name} must lie in [0, 1], got {v}")));
            }
        }
        if !(0.0..=0.1).contains(&self.dark_prob_per_window) {
            return Err(invalid(format!(
                "dark_prob_per_window must lie in [0, 0.1], got {}",
                self.dark_prob_per_window
            )));
        }
        if !(self.window_s > 0.0) || !(self.rep_rate_hz > 0.0) {
            return Err(invalid("window and repetition rate must be positive"));
        }
        if self.shots < 1 {
            return Err(invalid("shots must be at least 1"));
        }
        if !(self.nd_threshold_mu >= 0.0) {
            return Err(invalid("nd_threshold_mu must be ≥ 0"));
        }
        Ok(())
    }

    /// Memory-to-detector transmission at mean photon number `mu`, including the ND filter.
    pub fn transmission(&self, mu: f64) -> f64 {
        if mu > self.nd_threshold_mu {
            self.eta_t * self.nd_attenuation
        } else {
            self.eta_t
        }
    }

    pub fn dark_rate_hz(&self) -> f64 {
        self.dark_prob_per_window / self.window_s
    }
}

/// Off-resonance detection probability for a pulse of mean photon number `mu`
/// (no memory, no dark counts, no ND filter).
pub fn detection_probability(mu: f64, ch: &ChannelParams) -> f64 {
    -(-mu * ch.eta_t * ch.eta_d).exp_m1()
}

/// Mean photon number before the memory from the off-resonance detection probability.
pub fn mu_from_detection_probability(p_det: f64, ch: &ChannelParams) -> Result<f64> {
    if !(0.0..1.0).contains(&p_det) {
        return Err(invalid(format!("detection probability must lie in [0, 1), got {p_det}")));
    }
    let chain = ch.eta_t * ch.eta_d;
    if chain <= 0.0 {
        return Err(invalid("η_t·η_d must be positive to calibrate μ"));
    }
    Ok(-(-p_det).ln_1p() / chain)
}

/// Shot response of one (input, analyzer) pair as a function of the inter-rail phase.
///
/// The unnormalized amplitude reaching the detector is `α + β e^{iφ}`, so the
/// detected intensity is `|α|² + |β|² + 2|αβ| cos(φ + arg β − arg α)`.
#[derive(Debug, Clone, Copy)]
struct ShotModel {
    base: f64,
    swing: f64,
    offset: f64,
    rate: f64,
    dark: f64,
}

impl ShotModel {
    fn new(input: &PureQubit, mu: f64, mem: &MemoryParams, ch: &ChannelParams, setting: &MeasurementSetting) -> Self {
        let out = store_and_retrieve_parametric(input, mem, 0.0);
        let u = setting.unitary();
        let row = match setting.port {
            Port::Transmitted => 0,
            Port::Reflected => 1,
        };
        let alpha = u.0[row][0] * out.amplitudes[0];
        let beta = u.0[row][1] * out.amplitudes[1];
        ShotModel {
            base: alpha.norm_sqr() + beta.norm_sqr(),
            swing: 2.0 * alpha.norm() * beta.norm(),
            offset: beta.arg() - alpha.arg(),
            rate: mu * ch.transmission(mu) * ch.eta_d,
            dark: ch.dark_prob_per_window,
        }
    }

    fn intensity(&self, phase: f64) -> f64 {
        (self.base + self.swing * (phase + self.offset).cos()).max(0.0)
    }

    fn probability(&self, phase: f64) -> f64 {
        1.0 - (1.0 - self.dark) * (-self.rate * self.intensity(phase)).exp()
    }

    /// Click probability averaged over `φ ~ N(0, σ²)`.
    fn mean_probability(&self, sigma: f64) -> f64 {
        if sigma == 0.0 || self.swing == 0.0 {
            return self.probability(0.0);
        }
        // Simpson rule over ±10σ (or one full period when σ is large)
        let half = (10.0 * sigma).min(std::f64::consts::PI * 8.0);
        let n = 4000;
        let h = 2.0 * half / n as f64;
        let mut acc = 0.0;
        let mut wsum = 0.0;
        for k in 0..=n {
            let phi = -half + k as f64 * h;
            let w = if k == 0 || k == n {
                1.0
            } else if k % 2 == 1 {
                4.0
            } else {
                2.0
            };
            let g = (-0.5 * (phi / sigma).powi(2)).exp();
            acc += w * g * self.probability(phi);
            wsum += w * g;
        }
        acc / wsum
    }
}

pub fn click_probability(
    input: &PureQubit,
    mu: f64,
    mem: &MemoryParams,
    ch: &ChannelParams,
    setting: &MeasurementSetting,
    phase_draw: f64,
) -> f64 {
    ShotModel::new(input, mu, mem, ch, setting)
        .probability(phase_draw)
        .clamp(0.0, 1.0)
}

/// A prepared input qubit and the label it is reported under.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedInput {
    pub label: String,
    pub state: PureQubit,
}

impl PreparedInput {
    pub fn canonical(label: StateLabel) -> Self {
        PreparedInput {
            label: label.to_string(),
            state: label.state(),
        }
    }

    /// Canonical state with an extra relative phase on the V component,
    /// modelling imperfect preparation waveplates.
    pub fn with_preparation_error(label: StateLabel, phase_error_rad: f64) -> Self {
        PreparedInput {
            label: label.to_string(),
            state: label.state().with_relative_phase(phase_error_rad),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sampling {
    /// Binomial shot noise.
    #[default]
    Stochastic,
    /// Counts set to the rounded expectation; no shot noise.
    Expected,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountRecord {
    pub input_label: String,
    pub setting: MeasurementSetting,
    pub shots: u64,
    pub clicks: u64,
    /// Clicks in the same number of windows with the source blocked.
    pub dark_reference_clicks: u64,
}

impl CountRecord {
    pub fn rate(&self) -> f64 {
        self.clicks as f64 / self.shots as f64
    }

    pub fn dark_rate(&self) -> f64 {
        self.dark_reference_clicks as f64 / self.shots as f64
    }
}

fn binomial(rng: &mut SimRng, n: u64, p: f64) -> u64 {
    if p <= 0.0 {
        return 0;
    }
    if p >= 1.0 {
        return n;
    }
    Binomial::new(n, p).expect("valid binomial parameters").sample(rng)
}

/// Simulates every (input, setting) cell, row-major over inputs. Each cell
/// draws from its own substream, so the result depends only on `seed`.
///
/// Shots are independent and each draws its own inter-rail phase, so the
/// click count of a cell is exactly binomial with the phase-averaged click
/// probability; it is sampled that way rather than shot by shot.
#[allow(clippy::too_many_arguments)]
pub fn run_counts(
    inputs: &[PreparedInput],
    settings: &[MeasurementSetting],
    mu: f64,
    mem: &MemoryParams,
    ch: &ChannelParams,
    seed: u64,
    sampling: Sampling,
    exec: Execution,
) -> Result<Vec<CountRecord>> {
    mem.validate()?;
    ch.validate()?;
    if !(mu >= 0.0) || !mu.is_finite() {
        return Err(invalid(format!("mean photon number must be finite and ≥ 0, got {mu}")));
    }
    let n_set = settings.len();
    let sigma = mem.phase_noise_sigma_rad;
    let cells = map_range(inputs.len() * n_set, exec, |cell| {
        let input = &inputs[cell / n_set];
        let setting = settings[cell % n_set];
        let model = ShotModel::new(&input.state, mu, mem, ch, &setting);
        let (clicks, dark) = match sampling {
            Sampling::Stochastic => {
                let mut rng = substream(seed, domain::SIGNAL, cell as u64);
                let clicks = binomial(&mut rng, ch.shots, model.mean_probability(sigma));
                let mut rng = substream(seed, domain::DARK, cell as u64);
                (clicks, binomial(&mut rng, ch.shots, ch.dark_prob_per_window))
            }
            Sampling::Expected => {
                let p = model.mean_probability(sigma);
                let expect = |p: f64| (p * ch.shots as f64).round() as u64;
                (expect(p), expect(ch.dark_prob_per_window))
            }
        };
        CountRecord {
            input_label: input.label.clone(),
            setting,
            shots: ch.shots,
            clicks,
            dark_reference_clicks: dark,
        }
    });
    Ok(cells)
}

pub const COUNTS_HEADER: &str = "input,setting_qwp_deg,setting_hwp_deg,port,shots,clicks,dark_clicks";

fn plate_deg(p: Option<WaveplateSetting>) -> String {
    p.map(|p| sig12(p.angle().to_degrees())).unwrap_or_default()
}

pub fn write_counts_csv<W: Write>(mut w: W, records: &[CountRecord]) -> Result<()> {
    writeln!(w, "{COUNTS_HEADER}")?;
    for r in records {
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            r.input_label,
            plate_deg(r.setting.qwp_plate()),
            plate_deg(r.setting.hwp_plate()),
            r.setting.port.as_str(),
            r.shots,
            r.clicks,
            r.dark_reference_clicks
        )?;
    }
    Ok(())
}

#[derive(Deserialize)]
struct CountRow {
    input: String,
    setting_qwp_deg: Option<f64>,
    setting_hwp_deg: Option<f64>,
    port: String,
    shots: u64,
    clicks: u64,
    dark_clicks: u64,
}

pub fn read_counts_csv<R: Read>(r: R) -> Result<Vec<CountRecord>> {
    let mut rdr = csv::Reader::from_reader(r);
    let headers = rdr.headers()?.iter().collect::<Vec<_>>().join(",");
    if headers != COUNTS_HEADER {
        return Err(invalid(format!("unexpected counts header '{headers}'")));
    }
    let mut out = Vec::new();
    for row in rdr.deserialize() {
        let row: CountRow = row?;
        let mut plates = Vec::new();
        if let Some(q) = row.setting_qwp_deg {
            plates.push(WaveplateSetting::quarter_wave(q.to_radians()));
        }
        if let Some(h) = row.setting_hwp_deg {
            plates.push(WaveplateSetting::half_wave(h.to_radians()));
        }
        if row.clicks > row.shots || row.dark_clicks > row.shots {
            return Err(invalid(format!("record for '{}' has more clicks than shots", row.input)));
        }
        out.push(CountRecord {
            input_label: row.input,
            setting: MeasurementSetting::new(&plates, row.port.parse()?)?,
            shots: row.shots,
            clicks: row.clicks,
            dark_reference_clicks: row.dark_clicks,
        });
    }
    Ok(out)
}

/// Detection-time histogram accumulated over many shots.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeHistogram {
    pub bin_s: f64,
    /// Start of the first bin, relative to the input pulse center.
    pub t0_s: f64,
    pub counts: Vec<u64>,
}

impl TimeHistogram {
    pub fn bin_center(&self, k: usize) -> f64 {
        self.t0_s + (k as f64 + 0.5) * self.bin_s
    }

    /// Total counts in bins whose centers fall in `[lo, hi]`.
    pub fn counts_between(&self, lo: f64, hi: f64) -> u64 {
        (0..self.counts.len())
            .filter(|&k| {
                let t = self.bin_center(k);
                t >= lo && t <= hi
            })
            .map(|k| self.counts[k])
            .sum()
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "t_ns,counts")?;
        for (k, c) in self.counts.iter().enumerate() {
            writeln!(w, "{},{}", sig12(self.bin_center(k) * 1e9), c)?;
        }
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<TimeHistogram> {
        let mut rdr = csv::Reader::from_reader(r);
        let headers = rdr.headers()?.iter().collect::<Vec<_>>().join(",");
        if headers != "t_ns,counts" {
            return Err(invalid(format!("unexpected histogram header '{headers}'")));
        }
        let mut t = Vec::new();
        let mut counts = Vec::new();
        for row in rdr.deserialize() {
            let (t_ns, c): (f64, u64) = row?;
            t.push(t_ns * 1e-9);
            counts.push(c);
        }
        if t.len() < 2 {
            return Err(invalid("histogram needs at least two bins"));
        }
        let bin_s = (t[t.len() - 1] - t[0]) / (t.len() - 1) as f64;
        Ok(TimeHistogram {
            bin_s,
            t0_s: t[0] - 0.5 * bin_s,
            counts,
        })
    }
}

/// Expected counts per bin: signal `μ·η_t·η_d·∫|E|²` plus the dark rate, times shots.
pub fn histogram_expectation(pulse_out: &PulseShape, mu: f64, ch: &ChannelParams, bins: usize) -> Result<(f64, f64, Vec<f64>)> {
    ch.validate()?;
    if bins == 0 || bins > pulse_out.len() {
        return Err(invalid(format!("bins must lie in 1..={}", pulse_out.len())));
    }
    if !(mu >= 0.0) {
        return Err(invalid("mean photon number must be ≥ 0"));
    }
    let span = pulse_out.len() as f64 * pulse_out.grid_dt_s;
    let bin_s = span / bins as f64;
    let mut signal = vec![0.0; bins];
    for (k, z) in pulse_out.samples.iter().enumerate() {
        let b = ((k as f64 * pulse_out.grid_dt_s / bin_s) as usize).min(bins - 1);
        signal[b] += z.norm_sqr() * pulse_out.grid_dt_s;
    }
    let gain = mu * ch.transmission(mu) * ch.eta_d;
    let dark = ch.dark_rate_hz() * bin_s;
    let shots = ch.shots as f64;
    let expected = signal.into_iter().map(|e| shots * (gain * e + dark)).collect();
    Ok((bin_s, -pulse_out.center_s, expected))
}

/// Poisson-sampled detection histogram for a propagated pulse. The field is
/// taken in units where the input pulse carries unit energy.
pub fn build_histogram(pulse_out: &PulseShape, mu: f64, ch: &ChannelParams, seed: u64, bins: usize) -> Result<TimeHistogram> {
    let (bin_s, t0_s, expected) = histogram_expectation(pulse_out, mu, ch, bins)?;
    let counts = expected
        .iter()
        .enumerate()
        .map(|(k, &lambda)| {
            if lambda <= 0.0 {
                return 0;
            }
            let mut rng = substream(seed, domain::HISTOGRAM, k as u64);
            Poisson::new(lambda).map(|d| d.sample(&mut rng) as u64).unwrap_or(0)
        })
        .collect();
    Ok(TimeHistogram { bin_s, t0_s, counts })
}
