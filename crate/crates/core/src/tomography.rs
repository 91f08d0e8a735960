//! State reconstruction from analyzer counts.
//!
//! Both estimators work on the six canonical projectors. The likelihood is
//! the multinomial over settings conditioned on the total number of clicks,
//! which makes the unknown overall detection efficiency drop out:
//!
//! ```text
//! L(ρ) = Σᵢ nᵢ ln( sᵢ tr(Πᵢρ) / Σⱼ sⱼ tr(Πⱼρ) )
//! ```
//!
//! with `nᵢ` clicks in `sᵢ` shots.

use std::io::Write;

use rand_distr::{Binomial, Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::detection::CountRecord;
use crate::error::{invalid, Error, Result};
use crate::exec::{map_range, Execution};
use crate::polarization::{
    bloch_matrix, fidelity_unchecked, projection_unchecked, DensityMatrix2, Mat2, PureQubit, StateLabel, C64,
};
use crate::rng::{domain, substream};
use crate::table::sig12;

/// Default relative technical jitter on rates in the bootstrap.
pub const DEFAULT_TECH_SIGMA: f64 = 0.005;
pub const MIN_RESAMPLES: usize = 100;
/// Largest tolerated fraction of failed bootstrap resamples.
pub const MAX_FAILURE_FRACTION: f64 = 0.05;
const MLE_TOL: f64 = 1e-10;
const MLE_MAX_ITER: usize = 20_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    LinearInversion,
    MaxLikelihood,
}

/// One analyzer setting with its (possibly dark-corrected) click count.
#[derive(Debug, Clone, Copy)]
struct Observation {
    projector: Mat2,
    shots: f64,
    clicks: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Rates {
    #[default]
    Raw,
    DarkSubtracted,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DarkSubtracted {
    pub rate: f64,
    /// True when the dark reference exceeded the signal and the rate was clamped to 0.
    pub clamped: bool,
}

pub fn dark_subtract(record: &CountRecord) -> DarkSubtracted {
    let diff = record.rate() - record.dark_rate();
    DarkSubtracted {
        rate: diff.max(0.0),
        clamped: diff < 0.0,
    }
}

fn observations(records: &[CountRecord], rates: Rates) -> Result<Vec<Observation>> {
    if records.is_empty() {
        return Err(invalid("no count records"));
    }
    records
        .iter()
        .map(|r| {
            if r.shots == 0 {
                return Err(invalid(format!("record for '{}' has zero shots", r.input_label)));
            }
            let clicks = match rates {
                Rates::Raw => r.clicks as f64,
                Rates::DarkSubtracted => dark_subtract(r).rate * r.shots as f64,
            };
            Ok(Observation {
                projector: r.setting.projector(),
                shots: r.shots as f64,
                clicks,
            })
        })
        .collect()
}

/// Pooled click rate per canonical projector; unrecognized settings are skipped.
fn canonical_rates(records: &[CountRecord], rates: Rates) -> Result<[f64; 6]> {
    let mut clicks = [0.0; 6];
    let mut shots = [0.0; 6];
    for r in records {
        if let Some(label) = r.setting.canonical_label() {
            let i = StateLabel::ALL.iter().position(|&l| l == label).expect("label in ALL");
            shots[i] += r.shots as f64;
            clicks[i] += match rates {
                Rates::Raw => r.clicks as f64,
                Rates::DarkSubtracted => dark_subtract(r).rate * r.shots as f64,
            };
        }
    }
    let missing: Vec<String> = StateLabel::ALL
        .iter()
        .zip(&shots)
        .filter(|(_, &s)| s == 0.0)
        .map(|(l, _)| l.to_string())
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingSettings(missing));
    }
    let mut out = [0.0; 6];
    for i in 0..6 {
        out[i] = clicks[i] / shots[i];
    }
    Ok(out)
}

/// Unconstrained linear-inversion estimate. Its matrix is Hermitian with unit
/// trace but may have a negative eigenvalue; `physical` records which.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearEstimate {
    pub bloch: [f64; 3],
    pub physical: bool,
}

impl LinearEstimate {
    pub fn matrix(&self) -> Mat2 {
        bloch_matrix(self.bloch)
    }

    pub fn density(&self) -> Result<DensityMatrix2> {
        DensityMatrix2::new(self.matrix())
    }

    /// Eigenvalue clipping at zero followed by trace renormalization, which
    /// for a qubit shrinks the Bloch vector onto the unit sphere.
    pub fn psd_projected(&self) -> DensityMatrix2 {
        let [x, y, z] = self.bloch;
        let r = (x * x + y * y + z * z).sqrt();
        let s = if r > 1.0 { 1.0 / r } else { 1.0 };
        DensityMatrix2::from_raw(bloch_matrix([x * s, y * s, z * s]))
    }
}

pub fn linear_inversion(records: &[CountRecord]) -> Result<LinearEstimate> {
    linear_inversion_with(records, Rates::Raw)
}

pub fn linear_inversion_with(records: &[CountRecord], rates: Rates) -> Result<LinearEstimate> {
    let [h, v, d, a, r, l] = canonical_rates(records, rates)?;
    let stokes = |p: f64, m: f64| {
        if p + m > 0.0 {
            Ok((p - m) / (p + m))
        } else {
            Err(invalid("a projector pair recorded no clicks; Stokes parameter undefined"))
        }
    };
    let bloch = [stokes(d, a)?, stokes(r, l)?, stokes(h, v)?];
    let norm = bloch.iter().map(|x| x * x).sum::<f64>().sqrt();
    Ok(LinearEstimate {
        bloch,
        physical: norm <= 1.0 + 1e-12,
    })
}

fn log_likelihood_obs(obs: &[Observation], rho: &Mat2) -> f64 {
    let expected: Vec<f64> = obs
        .iter()
        .map(|o| o.shots * projection_unchecked(rho, &o.projector))
        .collect();
    let total: f64 = expected.iter().sum();
    if total <= 0.0 {
        return f64::NEG_INFINITY;
    }
    obs.iter()
        .zip(&expected)
        .filter(|(o, _)| o.clicks > 0.0)
        .map(|(o, &e)| o.clicks * (e.max(1e-300) / total).ln())
        .sum()
}

/// Conditional multinomial log-likelihood of `rho` given the records.
pub fn log_likelihood(records: &[CountRecord], rho: &DensityMatrix2) -> Result<f64> {
    Ok(log_likelihood_obs(&observations(records, Rates::Raw)?, rho.matrix()))
}

/// `ρ = T†T / tr(T†T)` for `T = [[t0, 0], [t2 + i t3, t1]]`.
fn rho_from_t(t: &[f64; 4]) -> (Mat2, f64) {
    let cc = C64::new(t[2], t[3]);
    let a = t[0] * t[0] + cc.norm_sqr();
    let b = t[1] * t[1];
    let tr = a + b;
    let m = Mat2([
        [C64::new(a, 0.0), cc.conj() * t[1]],
        [cc * t[1], C64::new(b, 0.0)],
    ]);
    (m.scale(C64::new(1.0 / tr, 0.0)), tr)
}

/// Cholesky factor of a full-rank density matrix in the `T` parametrization.
fn t_from_rho(rho: &Mat2) -> [f64; 4] {
    let t1 = rho.0[1][1].re.max(0.0).sqrt();
    let cc = rho.0[1][0] / t1;
    let t0 = (rho.0[0][0].re - cc.norm_sqr()).max(0.0).sqrt();
    [t0, t1, cc.re, cc.im]
}

/// Objective in `T` space; the trace penalty pins the otherwise flat scale direction.
fn objective(obs: &[Observation], t: &[f64; 4]) -> f64 {
    let (rho, tr) = rho_from_t(t);
    if !(tr > 0.0) || !tr.is_finite() {
        return f64::INFINITY;
    }
    -log_likelihood_obs(obs, &rho) + (tr - 1.0).powi(2)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MleFit {
    pub rho: DensityMatrix2,
    pub loglik: f64,
    pub iterations: usize,
}

/// `MLE_TOL` in log-likelihood, floored at the rounding noise of large sums.
fn stop_tol(f: f64) -> f64 {
    MLE_TOL.max(1e-14 * f.abs())
}

fn nelder_mead(obs: &[Observation], start: [f64; 4]) -> Result<([f64; 4], f64, usize)> {
    let f = |x: &[f64; 4]| objective(obs, x);
    let mut simplex: Vec<([f64; 4], f64)> = Vec::with_capacity(5);
    let mut iterations = 0;
    let mut x0 = start;
    // restart from the best vertex until a fresh simplex makes no progress
    for _restart in 0..20 {
        simplex.clear();
        simplex.push((x0, f(&x0)));
        for k in 0..4 {
            let mut x = x0;
            x[k] += if x[k].abs() > 1e-3 { 0.05 * x[k].abs().max(0.05) } else { 0.02 };
            simplex.push((x, f(&x)));
        }
        let start_best = simplex.iter().map(|s| s.1).fold(f64::INFINITY, f64::min);
        loop {
            simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
            let spread = simplex[4].1 - simplex[0].1;
            if spread < stop_tol(simplex[0].1) {
                break;
            }
            iterations += 1;
            if iterations > MLE_MAX_ITER {
                let best = simplex[0].0;
                return Err(Error::NonConvergence {
                    iterations,
                    best,
                    gradient_norm: gradient_norm(&f, &best),
                });
            }
            let mut centroid = [0.0; 4];
            for (x, _) in &simplex[..4] {
                for k in 0..4 {
                    centroid[k] += x[k] / 4.0;
                }
            }
            let along = |s: f64| {
                let mut y = [0.0; 4];
                for k in 0..4 {
                    y[k] = centroid[k] + s * (simplex[4].0[k] - centroid[k]);
                }
                y
            };
            let xr = along(-1.0);
            let fr = f(&xr);
            if fr < simplex[0].1 {
                let xe = along(-2.0);
                let fe = f(&xe);
                simplex[4] = if fe < fr { (xe, fe) } else { (xr, fr) };
            } else if fr < simplex[3].1 {
                simplex[4] = (xr, fr);
            } else {
                let (xc, fc) = if fr < simplex[4].1 {
                    let x = along(-0.5);
                    (x, f(&x))
                } else {
                    let x = along(0.5);
                    (x, f(&x))
                };
                if fc < simplex[4].1.min(fr) {
                    simplex[4] = (xc, fc);
                } else {
                    let best = simplex[0].0;
                    for v in simplex.iter_mut().skip(1) {
                        for k in 0..4 {
                            v.0[k] = best[k] + 0.5 * (v.0[k] - best[k]);
                        }
                        v.1 = f(&v.0);
                    }
                }
            }
        }
        let improvement = start_best - simplex[0].1;
        x0 = simplex[0].0;
        if improvement < stop_tol(simplex[0].1) {
            break;
        }
    }
    Ok((x0, f(&x0), iterations))
}

fn gradient_norm(f: &impl Fn(&[f64; 4]) -> f64, x: &[f64; 4]) -> f64 {
    let h = 1e-6;
    let mut g2 = 0.0;
    for k in 0..4 {
        let mut up = *x;
        let mut dn = *x;
        up[k] += h;
        dn[k] -= h;
        let g = (f(&up) - f(&dn)) / (2.0 * h);
        g2 += g * g;
    }
    g2.sqrt()
}

fn mle_obs(obs: &[Observation], init: &DensityMatrix2) -> Result<MleFit> {
    if obs.iter().all(|o| o.clicks <= 0.0) {
        return Err(invalid("no clicks recorded; likelihood is flat"));
    }
    // full-rank start so the Cholesky factor exists
    let eps = 1e-3;
    let start = bloch_matrix(init.bloch().map(|x| x * (1.0 - eps)));
    let (t, _, iterations) = nelder_mead(obs, t_from_rho(&start))?;
    let (m, _) = rho_from_t(&t);
    // symmetrize away rounding
    let m = Mat2([
        [C64::new(m.0[0][0].re, 0.0), m.0[0][1]],
        [m.0[0][1].conj(), C64::new(1.0 - m.0[0][0].re, 0.0)],
    ]);
    let rho = DensityMatrix2::new(m)?;
    Ok(MleFit {
        loglik: log_likelihood_obs(obs, rho.matrix()),
        rho,
        iterations,
    })
}

/// Physical maximum-likelihood estimate, started from the PSD-projected linear inversion.
pub fn max_likelihood(records: &[CountRecord]) -> Result<MleFit> {
    max_likelihood_with(records, Rates::Raw)
}

pub fn max_likelihood_with(records: &[CountRecord], rates: Rates) -> Result<MleFit> {
    let lin = linear_inversion_with(records, rates)?;
    let obs = observations(records, rates)?;
    mle_obs(&obs, &lin.psd_projected())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapOptions {
    pub resamples: usize,
    /// Relative Gaussian jitter applied to every rate before resampling.
    pub tech_sigma: f64,
}

impl Default for BootstrapOptions {
    fn default() -> Self {
        BootstrapOptions {
            resamples: 200,
            tech_sigma: DEFAULT_TECH_SIGMA,
        }
    }
}

/// Parametric bootstrap of the MLE fidelity. Returns the resample mean and standard deviation.
pub fn fidelity_with_error(
    records: &[CountRecord],
    target: &PureQubit,
    opts: &BootstrapOptions,
    seed: u64,
    exec: Execution,
) -> Result<(f64, f64)> {
    if opts.resamples < MIN_RESAMPLES {
        return Err(invalid(format!("at least {MIN_RESAMPLES} resamples required, got {}", opts.resamples)));
    }
    if !(opts.tech_sigma >= 0.0) {
        return Err(invalid("tech_sigma must be ≥ 0"));
    }
    let base = observations(records, Rates::Raw)?;
    let init = max_likelihood(records)?.rho;
    let jitter = (opts.tech_sigma > 0.0).then(|| Normal::new(0.0, opts.tech_sigma).expect("finite σ"));
    let outcomes = map_range(opts.resamples, exec, |b| {
        let mut rng = substream(seed, domain::BOOTSTRAP, b as u64);
        let obs: Vec<Observation> = base
            .iter()
            .map(|o| {
                let mut p = o.clicks / o.shots;
                if let Some(j) = &jitter {
                    p *= 1.0 + j.sample(&mut rng);
                }
                let p = p.clamp(0.0, 1.0);
                let n = o.shots as u64;
                let clicks = if p <= 0.0 {
                    0
                } else if p >= 1.0 {
                    n
                } else {
                    Binomial::new(n, p).expect("valid binomial").sample(&mut rng)
                };
                Observation {
                    clicks: clicks as f64,
                    ..*o
                }
            })
            .collect();
        mle_obs(&obs, &init).map(|fit| fidelity_unchecked(target, &fit.rho))
    });
    let ok: Vec<f64> = outcomes.iter().filter_map(|r| r.as_ref().ok().copied()).collect();
    let failed = outcomes.len() - ok.len();
    if failed as f64 > MAX_FAILURE_FRACTION * outcomes.len() as f64 {
        return Err(Error::BootstrapFailures {
            failed,
            total: outcomes.len(),
        });
    }
    let n = ok.len() as f64;
    let mean = ok.iter().sum::<f64>() / n;
    let var = ok.iter().map(|f| (f - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok((mean, var.sqrt()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TomographyResult {
    pub input: String,
    pub rho: DensityMatrix2,
    pub method: Method,
    pub fidelity_raw: f64,
    pub fidelity_err: f64,
    pub fidelity_dark_subtracted: f64,
    pub loglik: f64,
    pub iterations: usize,
    /// Whether the unconstrained linear estimate was already positive semidefinite.
    pub linear_inversion_physical: bool,
    /// Number of settings whose dark-subtracted rate was clamped at zero.
    pub dark_clamped: usize,
    pub bootstrap_resamples: usize,
}

/// Full analysis for one input: MLE, bootstrap error and dark-subtracted fidelity.
pub fn analyze(
    input: &str,
    records: &[CountRecord],
    target: &PureQubit,
    opts: &BootstrapOptions,
    seed: u64,
    exec: Execution,
) -> Result<TomographyResult> {
    let lin = linear_inversion(records)?;
    let fit = max_likelihood(records)?;
    let (_, err) = fidelity_with_error(records, target, opts, seed, exec)?;
    let sub = max_likelihood_with(records, Rates::DarkSubtracted)?;
    Ok(TomographyResult {
        input: input.to_string(),
        rho: fit.rho,
        method: Method::MaxLikelihood,
        fidelity_raw: fidelity_unchecked(target, &fit.rho),
        fidelity_err: err,
        fidelity_dark_subtracted: fidelity_unchecked(target, &sub.rho),
        loglik: fit.loglik,
        iterations: fit.iterations,
        linear_inversion_physical: lin.physical,
        dark_clamped: records.iter().filter(|r| dark_subtract(r).clamped).count(),
        bootstrap_resamples: opts.resamples,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FringeFit {
    /// Mean-to-peak scale `A` of `p(θ) = A(1 + V cos(4θ − φ))/2`.
    pub amplitude: f64,
    pub visibility: f64,
    pub phase_rad: f64,
    pub visibility_err: f64,
}

impl FringeFit {
    pub fn model(&self, theta: f64) -> f64 {
        0.5 * self.amplitude * (1.0 + self.visibility * (4.0 * theta - self.phase_rad).cos())
    }
}

fn solve3(mut a: [[f64; 3]; 3], mut b: [f64; 3]) -> Option<[f64; 3]> {
    for col in 0..3 {
        let piv = (col..3).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() < 1e-14 {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..3 {
            let k = a[row][col] / a[col][col];
            for c in col..3 {
                a[row][c] -= k * a[col][c];
            }
            b[row] -= k * b[col];
        }
    }
    let mut x = [0.0; 3];
    for row in (0..3).rev() {
        let s: f64 = (row + 1..3).map(|c| a[row][c] * x[c]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    Some(x)
}

/// Least squares of `p = c0 + c1 cos 4θ + c2 sin 4θ`; returns `(A, V, φ)`.
fn fit_sinusoid(angles: &[f64], p: &[f64]) -> Result<(f64, f64, f64)> {
    let mut ata = [[0.0; 3]; 3];
    let mut atb = [0.0; 3];
    for (&th, &y) in angles.iter().zip(p) {
        let row = [1.0, (4.0 * th).cos(), (4.0 * th).sin()];
        for i in 0..3 {
            for j in 0..3 {
                ata[i][j] += row[i] * row[j];
            }
            atb[i] += row[i] * y;
        }
    }
    let [c0, c1, c2] = solve3(ata, atb).ok_or_else(|| invalid("fringe angles do not determine the sinusoid"))?;
    let visibility = if c0 > 0.0 { ((c1 * c1 + c2 * c2).sqrt() / c0).clamp(0.0, 1.0) } else { 0.0 };
    Ok((2.0 * c0, visibility, c2.atan2(c1)))
}

fn check_fringe_angles(angles: &[f64]) -> Result<()> {
    let mut sorted = angles.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted.dedup_by(|a, b| (*a - *b).abs() < 1e-9);
    if sorted.len() < 8 {
        return Err(invalid(format!("fringe fit needs ≥ 8 distinct angles, got {}", sorted.len())));
    }
    let span = sorted[sorted.len() - 1] - sorted[0];
    if span < std::f64::consts::FRAC_PI_4 - 1e-12 {
        return Err(invalid(format!(
            "fringe angles span {:.2}°, less than half a period (45°)",
            span.to_degrees()
        )));
    }
    Ok(())
}

/// Fits the analyzer fringe to raw detection probabilities. `angles[i]` is
/// the HWP angle of `records[i]`.
pub fn fit_fringe(angles: &[f64], records: &[CountRecord], resamples: usize, seed: u64) -> Result<FringeFit> {
    if angles.len() != records.len() {
        return Err(invalid("one angle per record required"));
    }
    if angles.iter().any(|a| !a.is_finite()) || records.iter().any(|r| r.shots == 0) {
        return Err(invalid("angles must be finite and records non-empty"));
    }
    check_fringe_angles(angles)?;
    let p: Vec<f64> = records.iter().map(CountRecord::rate).collect();
    let (amplitude, visibility, phase_rad) = fit_sinusoid(angles, &p)?;
    let mut vis = Vec::with_capacity(resamples);
    for b in 0..resamples {
        let mut rng = substream(seed, domain::FRINGE, b as u64);
        let resampled: Vec<f64> = records
            .iter()
            .map(|r| {
                let q = r.rate();
                if q <= 0.0 || q >= 1.0 {
                    q
                } else {
                    Binomial::new(r.shots, q).expect("valid binomial").sample(&mut rng) as f64 / r.shots as f64
                }
            })
            .collect();
        vis.push(fit_sinusoid(angles, &resampled)?.1);
    }
    let visibility_err = if vis.len() > 1 {
        let m = vis.iter().sum::<f64>() / vis.len() as f64;
        (vis.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (vis.len() - 1) as f64).sqrt()
    } else {
        0.0
    };
    Ok(FringeFit {
        amplitude,
        visibility,
        phase_rad,
        visibility_err,
    })
}

pub fn write_fringe_csv<W: Write>(mut w: W, angles: &[f64], records: &[CountRecord], fit: &FringeFit) -> Result<()> {
    writeln!(w, "angle_deg,p_det,fit_p")?;
    for (&th, r) in angles.iter().zip(records) {
        writeln!(w, "{},{},{}", sig12(th.to_degrees()), sig12(r.rate()), sig12(fit.model(th)))?;
    }
    Ok(())
}

/// Density matrix from a Bloch vector, for building reference states.
pub fn density_from_bloch(r: [f64; 3]) -> Result<DensityMatrix2> {
    DensityMatrix2::new(bloch_matrix(r))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::polarization::{MeasurementSetting, Port};
    use proptest::prelude::*;
    use rand::Rng;
    use std::f64::consts::FRAC_PI_2;

    /// Counts set exactly to `shots · tr(Πρ)` (rounded).
    fn analytic_records(rho: &DensityMatrix2, shots: u64) -> Vec<CountRecord> {
        StateLabel::ALL
            .into_iter()
            .map(|l| {
                let setting = MeasurementSetting::canonical(l);
                let p = projection_unchecked(rho.matrix(), &setting.projector());
                CountRecord {
                    input_label: "x".into(),
                    setting,
                    shots,
                    clicks: (p * shots as f64).round() as u64,
                    dark_reference_clicks: 0,
                }
            })
            .collect()
    }

    fn sampled_records(rho: &DensityMatrix2, shots: u64, eff: f64, seed: u64) -> Vec<CountRecord> {
        let mut rng = substream(seed, 1000, 0);
        StateLabel::ALL
            .into_iter()
            .map(|l| {
                let setting = MeasurementSetting::canonical(l);
                let p = eff * projection_unchecked(rho.matrix(), &setting.projector());
                let clicks = if p > 0.0 { Binomial::new(shots, p).unwrap().sample(&mut rng) } else { 0 };
                CountRecord {
                    input_label: "x".into(),
                    setting,
                    shots,
                    clicks,
                    dark_reference_clicks: 0,
                }
            })
            .collect()
    }

    #[test]
    fn linear_inversion_exact() {
        let h = StateLabel::H.state().density();
        let est = linear_inversion(&analytic_records(&h, 1_000_000)).unwrap();
        assert!(est.matrix().max_abs_diff(h.matrix()) < 1e-12);
        assert!(est.physical);
        let mixed = DensityMatrix2::maximally_mixed();
        let est = linear_inversion(&analytic_records(&mixed, 1_000_000)).unwrap();
        assert!(est.matrix().max_abs_diff(mixed.matrix()) < 1e-12);
    }

    #[test]
    fn missing_settings_listed() {
        let recs: Vec<_> = analytic_records(&StateLabel::D.state().density(), 100)
            .into_iter()
            .filter(|r| !matches!(r.setting.canonical_label(), Some(StateLabel::R) | Some(StateLabel::A)))
            .collect();
        match linear_inversion(&recs) {
            Err(Error::MissingSettings(m)) => assert_eq!(m, vec!["A".to_string(), "R".to_string()]),
            other => panic!("unexpected {other:?}"),
        }
        assert!(max_likelihood(&recs).is_err());
    }

    #[test]
    fn linear_inversion_finite_sample_r_state() {
        // 95th percentile of the trace distance over 100 seeds at 1e5 shots per setting
        let r = StateLabel::R.state().density();
        let mut d: Vec<f64> = (0..100)
            .map(|s| {
                let est = linear_inversion(&sampled_records(&r, 100_000, 1.0, s)).unwrap();
                est.psd_projected().trace_distance(&r)
            })
            .collect();
        d.sort_by(f64::total_cmp);
        assert!(d[94] <= 0.01, "p95 = {}", d[94]);
    }

    #[test]
    fn mle_noiseless_pure_state() {
        let v = StateLabel::V.state();
        let fit = max_likelihood(&analytic_records(&v.density(), 100_000)).unwrap();
        assert!(fidelity_unchecked(&v, &fit.rho) >= 0.9999);
        fit.rho.validate().unwrap();
    }

    #[test]
    fn mle_beats_projected_linear_estimate() {
        // counts whose Stokes vector lies outside the Bloch ball
        let settings: Vec<_> = StateLabel::ALL.into_iter().map(MeasurementSetting::canonical).collect();
        let clicks = [950, 50, 940, 60, 520, 480];
        let recs: Vec<CountRecord> = settings
            .iter()
            .zip(clicks)
            .map(|(&setting, c)| CountRecord {
                input_label: "x".into(),
                setting,
                shots: 1000,
                clicks: c,
                dark_reference_clicks: 0,
            })
            .collect();
        let lin = linear_inversion(&recs).unwrap();
        assert!(!lin.physical);
        assert!(lin.density().is_err());
        let (lo, _) = crate::polarization::DensityMatrix2::maximally_mixed().eigenvalues();
        assert!(lo > 0.0);
        let fit = max_likelihood(&recs).unwrap();
        fit.rho.validate().unwrap();
        let projected = log_likelihood(&recs, &lin.psd_projected()).unwrap();
        assert!(fit.loglik >= projected - 1e-9, "{} < {projected}", fit.loglik);
    }

    #[test]
    fn likelihood_ignores_overall_efficiency() {
        let d = StateLabel::D.state().density();
        let a = analytic_records(&d, 1000);
        let b: Vec<_> = a
            .iter()
            .map(|r| CountRecord {
                shots: r.shots * 10,
                ..r.clone()
            })
            .collect();
        let fa = max_likelihood(&a).unwrap();
        let fb = max_likelihood(&b).unwrap();
        assert!(fa.rho.trace_distance(&fb.rho) < 1e-6);
    }

    #[test]
    fn mle_agrees_with_linear_inversion_inside_ball() {
        let rho = density_from_bloch([0.3, -0.2, 0.5]).unwrap();
        let recs = analytic_records(&rho, 10_000_000);
        let fit = max_likelihood(&recs).unwrap();
        assert!(fit.rho.trace_distance(&rho) < 1e-5);
        let lin = linear_inversion(&recs).unwrap();
        assert!(lin.density().unwrap().trace_distance(&fit.rho) < 1e-5);
    }

    #[test]
    fn analytic_pure_state_fidelity_is_one() {
        for l in StateLabel::ALL {
            let psi = l.state();
            let fit = max_likelihood(&analytic_records(&psi.density(), 1_000_000)).unwrap();
            assert!((fidelity_unchecked(&psi, &fit.rho) - 1.0).abs() < 1e-4, "{l}");
        }
    }

    #[test]
    fn bootstrap_requires_resamples() {
        let recs = analytic_records(&StateLabel::H.state().density(), 1000);
        let opts = BootstrapOptions {
            resamples: 99,
            ..BootstrapOptions::default()
        };
        assert!(fidelity_with_error(&recs, &StateLabel::H.state(), &opts, 1, Execution::Sequential).is_err());
    }

    #[test]
    fn bootstrap_error_vanishes_in_infinite_statistics() {
        let rho = density_from_bloch([0.8, 0.1, 0.0]).unwrap();
        let recs = analytic_records(&rho, 1_000_000_000_000);
        let opts = BootstrapOptions {
            resamples: 100,
            tech_sigma: 0.0,
        };
        let (mean, err) = fidelity_with_error(&recs, &StateLabel::D.state(), &opts, 3, Execution::Parallel).unwrap();
        assert!(err < 1e-5 && err > 0.0, "{err}");
        assert!((mean - 0.9).abs() < 1e-5);
    }

    #[test]
    fn bootstrap_error_scales_with_shots() {
        let rho = density_from_bloch([0.0, 0.9, 0.0]).unwrap();
        let target = StateLabel::R.state();
        let opts = BootstrapOptions {
            resamples: 400,
            tech_sigma: 0.0,
        };
        let (_, e1) = fidelity_with_error(&analytic_records(&rho, 5_000), &target, &opts, 1, Execution::Parallel).unwrap();
        let (_, e2) = fidelity_with_error(&analytic_records(&rho, 10_000), &target, &opts, 2, Execution::Parallel).unwrap();
        let ratio = e2 / e1;
        assert!((ratio - std::f64::consts::FRAC_1_SQRT_2).abs() < 0.1, "ratio {ratio}");
    }

    #[test]
    fn bootstrap_is_schedule_independent() {
        let rho = density_from_bloch([0.5, 0.5, 0.1]).unwrap();
        let recs = sampled_records(&rho, 20_000, 0.05, 8);
        let opts = BootstrapOptions::default();
        let psi = StateLabel::D.state();
        let a = fidelity_with_error(&recs, &psi, &opts, 11, Execution::Parallel).unwrap();
        let b = fidelity_with_error(&recs, &psi, &opts, 11, Execution::Sequential).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn dark_subtraction() {
        let setting = MeasurementSetting::canonical(StateLabel::H);
        let rec = |clicks, dark| CountRecord {
            input_label: "H".into(),
            setting,
            shots: 1000,
            clicks,
            dark_reference_clicks: dark,
        };
        assert_eq!(dark_subtract(&rec(5, 5)).rate, 0.0);
        assert!(!dark_subtract(&rec(5, 5)).clamped);
        assert_eq!(dark_subtract(&rec(17, 0)).rate, 0.017);
        let d = dark_subtract(&rec(2, 6));
        assert_eq!(d.rate, 0.0);
        assert!(d.clamped);
    }

    fn fringe_records(angles: &[f64], p: impl Fn(f64) -> f64, shots: u64) -> Vec<CountRecord> {
        angles
            .iter()
            .map(|&th| CountRecord {
                input_label: "x".into(),
                setting: MeasurementSetting::hwp(th),
                shots,
                clicks: (p(th) * shots as f64).round() as u64,
                dark_reference_clicks: 0,
            })
            .collect()
    }

    #[test]
    fn fringe_exact_recovery() {
        let angles: Vec<f64> = (0..16).map(|k| k as f64 * std::f64::consts::PI / 32.0).collect();
        // shots large enough that rounding sits below 1e-9
        let shots = 1u64 << 52;
        let recs = fringe_records(&angles, |th| 0.5 * (1.0 + 0.97 * (4.0 * th).cos()), shots);
        let fit = fit_fringe(&angles, &recs, 0, 0).unwrap();
        assert!((fit.visibility - 0.97).abs() < 1e-9);
        assert!((fit.amplitude - 1.0).abs() < 1e-9);
        assert!(fit.phase_rad.abs() < 1e-9);
    }

    #[test]
    fn fringe_rejects_degenerate_angles() {
        let same = vec![0.3; 10];
        let recs = fringe_records(&same, |_| 0.5, 100);
        assert!(fit_fringe(&same, &recs, 0, 0).is_err());
        let narrow: Vec<f64> = (0..10).map(|k| k as f64 * 0.01).collect();
        let recs = fringe_records(&narrow, |_| 0.5, 100);
        assert!(fit_fringe(&narrow, &recs, 0, 0).is_err());
        let few: Vec<f64> = (0..7).map(|k| k as f64 * 0.2).collect();
        let recs = fringe_records(&few, |_| 0.5, 100);
        assert!(fit_fringe(&few, &recs, 0, 0).is_err());
    }

    #[test]
    fn fringe_fit_csv() {
        let angles: Vec<f64> = (0..8).map(|k| k as f64 * std::f64::consts::PI / 16.0).collect();
        let recs = fringe_records(&angles, |th| 0.01 * (1.0 + 0.5 * (4.0 * th - 0.3).cos()), 100_000);
        let fit = fit_fringe(&angles, &recs, 200, 4).unwrap();
        assert!(fit.visibility_err > 0.0);
        assert!((fit.phase_rad - 0.3).abs() < 0.05);
        let mut buf = Vec::new();
        write_fringe_csv(&mut buf, &angles, &recs, &fit).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("angle_deg,p_det,fit_p\n"));
        assert_eq!(text.lines().count(), 9);
    }

    #[test]
    fn result_serializes() {
        let recs = analytic_records(&StateLabel::L.state().density(), 10_000);
        let res = analyze("L", &recs, &StateLabel::L.state(), &BootstrapOptions::default(), 2, Execution::Sequential).unwrap();
        let json = serde_json::to_string(&res).unwrap();
        assert!(json.contains("\"method\":\"max_likelihood\""));
        assert!(json.contains("\"real\""));
        let back: TomographyResult = serde_json::from_str(&json).unwrap();
        assert_eq!(back.input, "L");
        assert!(res.fidelity_err > 0.0);
    }

    #[test]
    fn transmitted_and_reflected_ports_both_accepted() {
        // a reflected port behind HWP at 0 realizes the V projector
        let rho = StateLabel::V.state().density();
        let mut recs = analytic_records(&rho, 100_000);
        recs[1].setting = MeasurementSetting::bare(Port::Reflected);
        let fit = max_likelihood(&recs).unwrap();
        assert!(fidelity_unchecked(&StateLabel::V.state(), &fit.rho) > 0.9999);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn mle_output_is_physical(seed in any::<u64>(), shots in 10u64..100_000) {
            let mut rng = substream(seed, 2000, 0);
            let settings: Vec<_> = StateLabel::ALL.into_iter().map(MeasurementSetting::canonical).collect();
            let recs: Vec<CountRecord> = settings.iter().map(|&setting| CountRecord {
                input_label: "x".into(),
                setting,
                shots,
                clicks: rng.random_range(0..=shots),
                dark_reference_clicks: 0,
            }).collect();
            match max_likelihood(&recs) {
                Ok(fit) => prop_assert!(fit.rho.validate().is_ok()),
                // zero-click pairs leave a Stokes parameter undefined
                Err(Error::InvalidInput(_)) => {}
                Err(e) => prop_assert!(false, "{e}"),
            }
        }

        #[test]
        fn fringe_period_invariance(v in 0.05f64..0.99, phi in -3.0f64..3.0) {
            let angles: Vec<f64> = (0..12).map(|k| k as f64 * std::f64::consts::PI / 24.0).collect();
            let shifted: Vec<f64> = angles.iter().map(|a| a + FRAC_PI_2).collect();
            let recs = fringe_records(&angles, |th| 0.3 * (1.0 + v * (4.0 * th - phi).cos()), 1 << 40);
            let a = fit_fringe(&angles, &recs, 0, 0).unwrap();
            let b = fit_fringe(&shifted, &recs, 0, 0).unwrap();
            prop_assert!((a.visibility - b.visibility).abs() < 1e-9);
            prop_assert!((a.amplitude - b.amplitude).abs() < 1e-9);
        }

        #[test]
        fn dark_subtract_never_negative(clicks in 0u64..1000, dark in 0u64..1000) {
            let rec = CountRecord {
                input_label: "x".into(),
                setting: MeasurementSetting::canonical(StateLabel::H),
                shots: 1000,
                clicks,
                dark_reference_clicks: dark,
            };
            prop_assert!(dark_subtract(&rec).rate >= 0.0);
        }
    }
}
