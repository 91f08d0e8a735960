//! Dual-rail atomic-frequency-comb storage channel.
//!
//! Two views of the same device:
//!
//! * a parametric channel acting on the polarization amplitudes (per-rail
//!   efficiency and a random inter-rail phase per shot), used by the
//!   detection and tomography pipeline;
//! * a spectral model of the comb as a linear filter, used to produce the
//!   transmitted pulse and the delayed echo of the temporal histogram.
//!
//! The comb absorbs with optical depth `d(f)`, a sum of Gaussian teeth spaced
//! by `Δ` inside a transparency window. Its amplitude response is
//! `exp(-d/2)`. By default the response is taken real (zero phase), which
//! places the echo at exactly `1/Δ` together with a mirror image at `-1/Δ`.
//! [`FilterPhase::Minimum`] instead completes the phase causally from the
//! folded cepstrum; the mirror image disappears but the comb dispersion then
//! pulls the echo slightly away from `1/Δ` for combs with few teeth.

use std::io::Write;
use std::sync::Arc;

use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::polarization::{PureQubit, C64};
use crate::table::sig12;

/// Inter-rail phase spread whose shot-averaged fringe visibility is `visibility`,
/// i.e. `exp(-σ²/2) = visibility`.
pub fn phase_sigma_for_visibility(visibility: f64) -> f64 {
    (-2.0 * visibility.ln()).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterPhase {
    #[default]
    Zero,
    Minimum,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MemoryParams {
    /// Comb tooth spacing `Δ`.
    pub comb_spacing_hz: f64,
    /// Rephasing time `1/Δ`; kept alongside the spacing for readability.
    pub storage_time_s: f64,
    pub eta_mem_h: f64,
    pub eta_mem_v: f64,
    pub phase_noise_sigma_rad: f64,
    pub n_teeth: u32,
    pub tooth_fwhm_hz: f64,
    pub peak_od: f64,
    pub filter_phase: FilterPhase,
}

impl Default for MemoryParams {
    fn default() -> Self {
        MemoryParams {
            comb_spacing_hz: 2.0e6,
            storage_time_s: 500e-9,
            eta_mem_h: 0.10,
            eta_mem_v: 0.10,
            phase_noise_sigma_rad: phase_sigma_for_visibility(0.83),
            n_teeth: 4,
            tooth_fwhm_hz: 500e3,
            peak_od: 5.0,
            filter_phase: FilterPhase::Zero,
        }
    }
}

impl MemoryParams {
    /// Sets `Δ` and keeps `t_S = 1/Δ` in sync.
    pub fn with_comb_spacing(mut self, spacing_hz: f64) -> Self {
        self.comb_spacing_hz = spacing_hz;
        self.storage_time_s = 1.0 / spacing_hz;
        self
    }

    pub fn with_efficiency(mut self, eta: f64) -> Self {
        self.eta_mem_h = eta;
        self.eta_mem_v = eta;
        self
    }

    pub fn with_phase_noise(mut self, sigma_rad: f64) -> Self {
        self.phase_noise_sigma_rad = sigma_rad;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.comb_spacing_hz > 0.0) || !self.comb_spacing_hz.is_finite() {
            return Err(invalid("comb spacing must be positive"));
        }
        if (self.storage_time_s * self.comb_spacing_hz - 1.0).abs() > 1e-9 {
            return Err(invalid(format!(
                "storage time {} s is not 1/Δ for Δ = {} Hz",
                self.storage_time_s, self.comb_spacing_hz
            )));
        }
        for (name, eta) in [("eta_mem_h", self.eta_mem_h), ("eta_mem_v", self.eta_mem_v)] {
            if !(0.0..=1.0).contains(&eta) {
                return Err(invalid(format!("{name} must lie in [0, 1], got {eta}")));
            }
        }
        if !(self.phase_noise_sigma_rad >= 0.0) || !self.phase_noise_sigma_rad.is_finite() {
            return Err(invalid("phase noise σ must be finite and ≥ 0"));
        }
        if self.n_teeth == 0 {
            return Err(invalid("comb needs at least one tooth"));
        }
        if !(self.tooth_fwhm_hz > 0.0 && self.tooth_fwhm_hz < self.comb_spacing_hz) {
            return Err(invalid("tooth FWHM must be positive and below the comb spacing"));
        }
        if !(self.peak_od >= 0.0) || !self.peak_od.is_finite() {
            return Err(invalid("peak optical depth must be finite and ≥ 0"));
        }
        Ok(())
    }

    /// Full width of the transparency window that holds the teeth.
    pub fn comb_span_hz(&self) -> f64 {
        self.n_teeth as f64 * self.comb_spacing_hz
    }

    /// Optical depth at detuning `f` from the comb center.
    pub fn optical_depth(&self, f: f64) -> f64 {
        if self.peak_od == 0.0 || f.abs() > 0.5 * self.comb_span_hz() {
            return 0.0;
        }
        let k = 4.0 * std::f64::consts::LN_2 / (self.tooth_fwhm_hz * self.tooth_fwhm_hz);
        let mid = 0.5 * (self.n_teeth as f64 - 1.0);
        (0..self.n_teeth)
            .map(|i| {
                let center = (i as f64 - mid) * self.comb_spacing_hz;
                self.peak_od * (-k * (f - center).powi(2)).exp()
            })
            .sum()
    }
}

/// Unnormalized output of the parametric channel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Retrieved {
    pub amplitudes: [C64; 2],
    /// Probability that the excitation is re-emitted at all.
    pub survival: f64,
}

impl Retrieved {
    /// Conditional output state, or `None` if nothing survives.
    pub fn normalized(&self) -> Option<PureQubit> {
        if self.survival <= 0.0 {
            return None;
        }
        PureQubit::new(self.amplitudes[0], self.amplitudes[1]).ok()
    }
}

/// Each rail is attenuated by its own efficiency; the V rail picks up the
/// inter-rail phase drawn for this shot.
pub fn store_and_retrieve_parametric(qubit: &PureQubit, params: &MemoryParams, phase_draw: f64) -> Retrieved {
    let h = qubit.a_h() * params.eta_mem_h.sqrt();
    let v = qubit.a_v() * params.eta_mem_v.sqrt() * C64::from_polar(1.0, phase_draw);
    Retrieved {
        amplitudes: [h, v],
        survival: h.norm_sqr() + v.norm_sqr(),
    }
}

/// Complex field envelope sampled at `t_k = k · grid_dt_s`.
#[derive(Debug, Clone, PartialEq)]
pub struct PulseShape {
    pub fwhm_s: f64,
    pub center_s: f64,
    pub grid_dt_s: f64,
    pub samples: Vec<C64>,
}

impl PulseShape {
    /// Gaussian with intensity FWHM `fwhm_s`, normalized to unit energy.
    pub fn gaussian(fwhm_s: f64, center_s: f64, grid_dt_s: f64, len: usize) -> Result<Self> {
        if !(fwhm_s > 0.0 && grid_dt_s > 0.0) || len < 2 {
            return Err(invalid("pulse needs positive width, positive step and at least two samples"));
        }
        let a = 2.0 * std::f64::consts::LN_2 / (fwhm_s * fwhm_s);
        let mut samples: Vec<C64> = (0..len)
            .map(|k| {
                let t = k as f64 * grid_dt_s - center_s;
                C64::new((-a * t * t).exp(), 0.0)
            })
            .collect();
        let energy: f64 = samples.iter().map(|z| z.norm_sqr()).sum::<f64>() * grid_dt_s;
        let scale = energy.sqrt().recip();
        samples.iter_mut().for_each(|z| *z *= scale);
        let pulse = PulseShape {
            fwhm_s,
            center_s,
            grid_dt_s,
            samples,
        };
        pulse.validate()?;
        Ok(pulse)
    }

    /// Gaussian on a power-of-two grid sized for `params`: at least four
    /// storage times after the pulse and a spectral resolution of a tenth of
    /// the tooth width.
    pub fn for_memory(params: &MemoryParams, fwhm_s: f64, grid_dt_s: f64) -> Result<Self> {
        params.validate()?;
        let center = 4.0 * fwhm_s;
        let span = (center + 4.0 * params.storage_time_s + 4.0 * fwhm_s).max(10.0 / params.tooth_fwhm_hz);
        let len = ((span / grid_dt_s).ceil() as usize).next_power_of_two();
        PulseShape::gaussian(fwhm_s, center, grid_dt_s, len)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn time(&self, k: usize) -> f64 {
        k as f64 * self.grid_dt_s
    }

    pub fn intensity(&self) -> Vec<f64> {
        self.samples.iter().map(|z| z.norm_sqr()).collect()
    }

    /// `Σ |E|² dt`.
    pub fn energy(&self) -> f64 {
        self.samples.iter().map(|z| z.norm_sqr()).sum::<f64>() * self.grid_dt_s
    }

    /// Energy between `t_lo` and `t_hi` (absolute grid time).
    pub fn energy_between(&self, t_lo: f64, t_hi: f64) -> f64 {
        self.samples
            .iter()
            .enumerate()
            .filter(|(k, _)| {
                let t = self.time(*k);
                t >= t_lo && t <= t_hi
            })
            .map(|(_, z)| z.norm_sqr())
            .sum::<f64>()
            * self.grid_dt_s
    }

    pub fn validate(&self) -> Result<()> {
        if self.samples.len() < 2 || !(self.grid_dt_s > 0.0) {
            return Err(invalid("pulse grid must have at least two samples and a positive step"));
        }
        let energy = self.energy();
        if !(energy.is_finite() && energy > 0.0) {
            return Err(invalid("pulse energy must be finite and positive"));
        }
        let peak = self.samples.iter().map(|z| z.norm_sqr()).fold(0.0, f64::max);
        let edge = self.samples[0].norm_sqr().max(self.samples[self.len() - 1].norm_sqr());
        if edge >= 1e-6 * peak {
            return Err(invalid("pulse grid too short: boundary samples exceed 1e-6 of the peak"));
        }
        Ok(())
    }

    pub fn write_intensity_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "time_s,intensity")?;
        for (k, z) in self.samples.iter().enumerate() {
            writeln!(w, "{},{}", sig12(self.time(k)), sig12(z.norm_sqr()))?;
        }
        Ok(())
    }
}

/// Result of sending a pulse through the comb.
#[derive(Debug, Clone)]
pub struct Propagation {
    pub output: PulseShape,
    /// Delay of the first echo maximum from the input center; `None` when
    /// there is no secondary peak (empty pit).
    pub echo_delay_s: Option<f64>,
    /// Output energy in `[t_S − fwhm, t_S + fwhm]` after the input center,
    /// relative to the input energy; zero without an echo.
    pub echo_efficiency: f64,
}

fn check_uniform(grid: &[f64]) -> Result<f64> {
    if grid.len() < 2 {
        return Err(invalid("frequency grid needs at least two points"));
    }
    let df = (grid[grid.len() - 1] - grid[0]) / (grid.len() - 1) as f64;
    if !(df > 0.0) {
        return Err(invalid("frequency grid must be strictly ascending"));
    }
    if grid.windows(2).any(|w| ((w[1] - w[0]) - df).abs() > 1e-6 * df) {
        return Err(invalid("frequency grid must be uniformly spaced"));
    }
    Ok(df)
}

/// `exp(-d/2)` with the requested phase over one period of a uniform grid.
/// The minimum-phase completion needs the grid in FFT (cyclic) order.
fn filter_response(
    optical_depth: &[f64],
    phase: FilterPhase,
    forward: &Arc<dyn Fft<f64>>,
    inverse: &Arc<dyn Fft<f64>>,
) -> Vec<C64> {
    let n = optical_depth.len();
    if phase == FilterPhase::Zero || optical_depth.iter().all(|d| *d == 0.0) {
        return optical_depth.iter().map(|d| C64::new((-0.5 * d).exp(), 0.0)).collect();
    }
    let mut cep: Vec<C64> = optical_depth.iter().map(|d| C64::new(-0.5 * d, 0.0)).collect();
    inverse.process(&mut cep);
    let norm = 1.0 / n as f64;
    let half = n / 2;
    for (k, z) in cep.iter_mut().enumerate() {
        let w = if k == 0 || (n % 2 == 0 && k == half) {
            1.0
        } else if k < n.div_ceil(2) {
            2.0
        } else {
            0.0
        };
        *z *= w * norm;
    }
    forward.process(&mut cep);
    // the real part is -d/2 up to rounding; pin it so |t| is exact
    cep.iter()
        .zip(optical_depth)
        .map(|(z, d)| C64::from_polar((-0.5 * d).exp(), z.im))
        .collect()
}

/// Complex amplitude transmission of the comb on an ascending, uniform
/// frequency grid symmetric about the comb center.
pub fn comb_transfer_function(params: &MemoryParams, freq_grid: &[f64]) -> Result<Vec<C64>> {
    params.validate()?;
    let df = check_uniform(freq_grid)?;
    let limit = params.tooth_fwhm_hz / 10.0;
    if df > limit {
        return Err(Error::GridTooCoarse {
            spacing_hz: df,
            limit_hz: limit,
        });
    }
    if (freq_grid[0] + freq_grid[freq_grid.len() - 1]).abs() > df {
        return Err(invalid("frequency grid must be symmetric about the comb center"));
    }
    // rotate to cyclic order so the cepstral fold sees zero frequency first
    let n = freq_grid.len();
    let zero = freq_grid.iter().position(|f| f.abs() < 0.5 * df).unwrap_or(n / 2);
    let d: Vec<f64> = (0..n).map(|k| params.optical_depth(freq_grid[(zero + k) % n])).collect();
    let mut planner = FftPlanner::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);
    let cyclic = filter_response(&d, params.filter_phase, &fwd, &inv);
    Ok((0..n).map(|k| cyclic[(k + n - zero) % n]).collect())
}

/// Frequencies of FFT bins in natural order (`0, df, …, -df`).
pub fn fft_frequencies(n: usize, dt: f64) -> Vec<f64> {
    let df = 1.0 / (n as f64 * dt);
    (0..n)
        .map(|k| if k < n.div_ceil(2) { k as f64 * df } else { (k as f64 - n as f64) * df })
        .collect()
}

pub fn propagate_pulse(pulse: &PulseShape, params: &MemoryParams) -> Result<Propagation> {
    params.validate()?;
    pulse.validate()?;
    let bandwidth = 0.44 / pulse.fwhm_s;
    if bandwidth >= params.comb_span_hz() {
        return Err(Error::Bandwidth {
            bandwidth_hz: bandwidth,
            comb_span_hz: params.comb_span_hz(),
        });
    }
    let n = pulse.len();
    let df = 1.0 / (n as f64 * pulse.grid_dt_s);
    let limit = params.tooth_fwhm_hz / 10.0;
    if df > limit {
        return Err(Error::GridTooCoarse {
            spacing_hz: df,
            limit_hz: limit,
        });
    }
    let mut planner = FftPlanner::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);

    let depth: Vec<f64> = fft_frequencies(n, pulse.grid_dt_s)
        .into_iter()
        .map(|f| params.optical_depth(f))
        .collect();
    let response = filter_response(&depth, params.filter_phase, &fwd, &inv);

    let mut field = pulse.samples.clone();
    fwd.process(&mut field);
    let norm = 1.0 / n as f64;
    for (z, h) in field.iter_mut().zip(&response) {
        *z *= h * norm;
    }
    inv.process(&mut field);

    let output = PulseShape {
        fwhm_s: pulse.fwhm_s,
        center_s: pulse.center_s,
        grid_dt_s: pulse.grid_dt_s,
        samples: field,
    };
    let echo_delay_s = find_echo(&output, pulse);
    let echo_efficiency = match echo_delay_s {
        Some(_) => {
            let t = pulse.center_s + params.storage_time_s;
            output.energy_between(t - pulse.fwhm_s, t + pulse.fwhm_s) / pulse.energy()
        }
        None => 0.0,
    };
    Ok(Propagation {
        output,
        echo_delay_s,
        echo_efficiency,
    })
}

/// Largest local maximum of the output intensity later than one FWHM after
/// the input center, reported relative to that center.
fn find_echo(output: &PulseShape, input: &PulseShape) -> Option<f64> {
    let start = ((input.center_s + input.fwhm_s) / output.grid_dt_s).floor() as usize + 1;
    let intensity = output.intensity();
    let peak_in = input.samples.iter().map(|z| z.norm_sqr()).fold(0.0, f64::max);
    // the decaying edge of the transmitted pulse is never a local maximum
    (start.max(1)..intensity.len().saturating_sub(1))
        .filter(|&k| intensity[k] > 1e-9 * peak_in && intensity[k] >= intensity[k - 1] && intensity[k] > intensity[k + 1])
        .max_by(|&a, &b| intensity[a].total_cmp(&intensity[b]))
        .map(|k| output.time(k) - input.center_s)
}
