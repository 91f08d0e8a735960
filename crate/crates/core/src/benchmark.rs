//! Poissonian photon statistics and the classical measure-and-prepare bound.
//!
//! For a weak coherent input with mean photon number `μ`, the best classical
//! strategy that sees `N` photons reaches fidelity `(N+1)/(N+2)`. Averaging
//! over the non-vacuum Poisson distribution gives the unit-efficiency bound.
//! A classical device that may stay silent can mimic a memory of efficiency
//! `η` by answering only for the largest photon numbers: it always answers
//! for `N > n_min`, answers with probability mass `γ` at `N = n_min`, and
//! nothing below. `n_min` is the least `i` such that
//! `Σ_{N>i} P(μ,N) ≤ (1 − P(μ,0))·η`, and `γ` fills the remaining mass.

use std::io::{Read, Write};
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::exec::{map_slice, Execution};
use crate::table::sig12;

/// Hard cap on the Poisson series length.
pub const MAX_TERMS: usize = 500;
/// Bound on the discarded tail mass.
pub const TAIL_TOL: f64 = 1e-14;
const DIRECT_PMF_MAX_N: u32 = 30;

pub const SINGLE_PHOTON_FIDELITY: f64 = 2.0 / 3.0;

fn ln_factorials() -> &'static [f64] {
    static TABLE: OnceLock<Vec<f64>> = OnceLock::new();
    TABLE.get_or_init(|| {
        let mut t = Vec::with_capacity(MAX_TERMS + 2);
        let mut acc = 0.0;
        t.push(0.0);
        for k in 1..=(MAX_TERMS + 1) {
            acc += (k as f64).ln();
            t.push(acc);
        }
        t
    })
}

fn ln_factorial(n: u32) -> f64 {
    let t = ln_factorials();
    match t.get(n as usize) {
        Some(v) => *v,
        None => {
            // Stirling series beyond the table
            let x = n as f64;
            x * x.ln() - x + 0.5 * (2.0 * std::f64::consts::PI * x).ln() + 1.0 / (12.0 * x)
                - 1.0 / (360.0 * x * x * x)
        }
    }
}

fn check_mu(mu: f64) -> Result<()> {
    if !mu.is_finite() || mu < 0.0 {
        return Err(invalid(format!("mean photon number must be finite and ≥ 0, got {mu}")));
    }
    Ok(())
}

fn pmf_unchecked(mu: f64, n: u32) -> f64 {
    if mu == 0.0 {
        return if n == 0 { 1.0 } else { 0.0 };
    }
    if n <= DIRECT_PMF_MAX_N {
        let mut fact = 1.0;
        for k in 2..=n {
            fact *= k as f64;
        }
        (-mu).exp() * mu.powi(n as i32) / fact
    } else {
        (-mu + n as f64 * mu.ln() - ln_factorial(n)).exp()
    }
}

/// `P(μ, N) = e^{-μ} μ^N / N!`.
pub fn poisson_pmf(mu: f64, n: u32) -> Result<f64> {
    check_mu(mu)?;
    Ok(pmf_unchecked(mu, n))
}

/// Remainder bound `P(μ,K+1) / (1 − μ/(K+2))` for truncating after term `K`.
fn truncation_bound(mu: f64, k: usize) -> f64 {
    let ratio = mu / (k as f64 + 2.0);
    if ratio >= 1.0 {
        return f64::INFINITY;
    }
    pmf_unchecked(mu, k as u32 + 1) / (1.0 - ratio)
}

/// A truncated Poisson series with precomputed upper tails.
#[derive(Debug, Clone)]
pub struct PoissonSeries {
    mu: f64,
    pmf: Vec<f64>,
    /// `tail[i] = Σ_{N ≥ i} P(μ,N)` for `i ≥ 2`; `tail[1]` is the non-vacuum mass.
    tail: Vec<f64>,
    /// `weighted_tail[i] = Σ_{N ≥ i} (N+1)/(N+2) P(μ,N)`.
    weighted_tail: Vec<f64>,
    non_vacuum: f64,
}

impl PoissonSeries {
    pub fn new(mu: f64) -> Result<Self> {
        check_mu(mu)?;
        let mut last = 1;
        while last < MAX_TERMS && truncation_bound(mu, last) >= TAIL_TOL {
            last += 1;
        }
        let pmf: Vec<f64> = (0..=last as u32).map(|n| pmf_unchecked(mu, n)).collect();
        let mut tail = vec![0.0; last + 2];
        let mut weighted_tail = vec![0.0; last + 2];
        for n in (1..=last).rev() {
            tail[n] = tail[n + 1] + pmf[n];
            weighted_tail[n] = weighted_tail[n + 1] + photon_fidelity(n as u32) * pmf[n];
        }
        let non_vacuum = -(-mu).exp_m1();
        tail[1] = non_vacuum;
        tail[0] = 1.0;
        Ok(PoissonSeries {
            mu,
            pmf,
            tail,
            weighted_tail,
            non_vacuum,
        })
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    /// Index of the last retained term.
    pub fn cutoff(&self) -> usize {
        self.pmf.len() - 1
    }

    pub fn pmf(&self, n: usize) -> f64 {
        self.pmf.get(n).copied().unwrap_or(0.0)
    }

    /// `Σ_{N ≥ i} P(μ,N)`.
    pub fn tail(&self, i: usize) -> f64 {
        self.tail.get(i).copied().unwrap_or(0.0)
    }

    pub fn non_vacuum(&self) -> f64 {
        self.non_vacuum
    }

    fn weighted_tail(&self, i: usize) -> f64 {
        self.weighted_tail.get(i).copied().unwrap_or(0.0)
    }
}

/// Optimal classical fidelity `(N+1)/(N+2)` for `N` copies.
pub fn photon_fidelity(n: u32) -> f64 {
    (n as f64 + 1.0) / (n as f64 + 2.0)
}

/// Classical bound for unit efficiency: non-vacuum Poisson average of `(N+1)/(N+2)`.
pub fn f_class_unit_efficiency(mu: f64) -> Result<f64> {
    if !(mu > 0.0) || !mu.is_finite() {
        return Err(invalid(format!("mean photon number must be > 0, got {mu}")));
    }
    let s = PoissonSeries::new(mu)?;
    Ok(s.weighted_tail(1) / s.tail(1))
}

fn check_eta(eta: f64) -> Result<()> {
    if !(eta > 0.0 && eta <= 1.0) {
        return Err(invalid(format!("efficiency must lie in (0, 1], got {eta}")));
    }
    Ok(())
}

fn threshold(series: &PoissonSeries, eta: f64) -> (u32, f64) {
    let target = series.non_vacuum() * eta;
    let mut i = 0;
    while series.tail(i + 1) > target {
        i += 1;
    }
    let gamma = (target - series.tail(i + 1)).max(0.0);
    (i as u32, gamma)
}

/// Threshold photon number and fractional acceptance mass that realize efficiency `eta`.
pub fn n_min_for_efficiency(mu: f64, eta: f64) -> Result<(u32, f64)> {
    if !(mu > 0.0) {
        return Err(invalid(format!("mean photon number must be > 0, got {mu}")));
    }
    check_eta(eta)?;
    let s = PoissonSeries::new(mu)?;
    Ok(threshold(&s, eta))
}

/// One evaluation of the efficiency-aware classical bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkPoint {
    pub mu: f64,
    pub eta: f64,
    pub n_min: u32,
    pub gamma: f64,
    pub f_class: f64,
}

impl BenchmarkPoint {
    /// Effective classical efficiency implied by `(n_min, gamma)`.
    pub fn reconstructed_eta(&self) -> Result<f64> {
        let s = PoissonSeries::new(self.mu)?;
        Ok((self.gamma + s.tail(self.n_min as usize + 1)) / s.non_vacuum())
    }
}

pub fn f_class(mu: f64, eta: f64) -> Result<BenchmarkPoint> {
    if !(mu > 0.0) || !mu.is_finite() {
        return Err(invalid(format!("mean photon number must be > 0, got {mu}")));
    }
    check_eta(eta)?;
    let s = PoissonSeries::new(mu)?;
    let (n_min, gamma) = threshold(&s, eta);
    let above = n_min as usize + 1;
    let num = photon_fidelity(n_min) * gamma + s.weighted_tail(above);
    let den = gamma + s.tail(above);
    Ok(BenchmarkPoint {
        mu,
        eta,
        n_min,
        gamma,
        f_class: num / den,
    })
}

pub fn benchmark_curve(mu_grid: &[f64], eta: f64, exec: Execution) -> Result<Vec<BenchmarkPoint>> {
    if mu_grid.is_empty() {
        return Err(invalid("empty μ grid"));
    }
    if mu_grid.iter().any(|m| !(*m > 0.0) || !m.is_finite()) {
        return Err(invalid("μ grid must be positive and finite"));
    }
    if mu_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(invalid("μ grid must be strictly increasing"));
    }
    check_eta(eta)?;
    map_slice(mu_grid, exec, |&mu| f_class(mu, eta)).into_iter().collect()
}

/// `n` log-spaced points from `lo` to `hi` inclusive.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Result<Vec<f64>> {
    if !(lo > 0.0 && hi > lo) || n < 2 {
        return Err(invalid("log grid needs 0 < lo < hi and at least two points"));
    }
    let (a, b) = (lo.ln(), hi.ln());
    let mut g: Vec<f64> = (0..n)
        .map(|k| (a + (b - a) * k as f64 / (n - 1) as f64).exp())
        .collect();
    g[0] = lo;
    g[n - 1] = hi;
    Ok(g)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    Quantum,
    Classical,
}

/// Compares a measured conditional fidelity with the classical bound at `(mu, eta)`.
/// Strictly exceeding the bound is required for a quantum verdict.
pub fn regime_verdict(measured_fidelity: f64, mu: f64, eta: f64) -> Result<(Regime, BenchmarkPoint)> {
    if !(0.0..=1.0).contains(&measured_fidelity) {
        return Err(invalid(format!("fidelity must lie in [0, 1], got {measured_fidelity}")));
    }
    let point = f_class(mu, eta)?;
    let regime = if measured_fidelity > point.f_class {
        Regime::Quantum
    } else {
        Regime::Classical
    };
    Ok((regime, point))
}

pub const CURVE_HEADER: &str = "mu,eta,n_min,gamma,f_class";

pub fn write_curve_csv<W: Write>(mut w: W, points: &[BenchmarkPoint]) -> Result<()> {
    writeln!(w, "{CURVE_HEADER}")?;
    for p in points {
        writeln!(
            w,
            "{},{},{},{},{}",
            sig12(p.mu),
            sig12(p.eta),
            p.n_min,
            sig12(p.gamma),
            sig12(p.f_class)
        )?;
    }
    Ok(())
}

pub fn read_curve_csv<R: Read>(r: R) -> Result<Vec<BenchmarkPoint>> {
    let mut rdr = csv::Reader::from_reader(r);
    let headers = rdr.headers()?.iter().collect::<Vec<_>>().join(",");
    if headers != CURVE_HEADER {
        return Err(invalid(format!("unexpected benchmark header '{headers}'")));
    }
    let mut out = Vec::new();
    for rec in rdr.deserialize() {
        out.push(rec?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    // Reference values: 40-digit mpmath evaluation of the defining sums.
    const PMF_04_0: f64 = 0.670320046035639285860;
    const PMF_3_3: f64 = 0.224041807655387743407;
    const PMF_36_36: f64 = 0.066336649101302267127;
    const PMF_10_50: f64 = 1.492726725777484180870e-19;
    const FUNIT_04: f64 = 0.683510436560527287311;
    const FUNIT_1: f64 = 0.709011646565336787807;
    const FUNIT_36: f64 = 0.972993827160493936694;
    const GAMMA_3_05: f64 = 0.122338354598299287242;
    const F_3_05: f64 = 0.838515408333377479511;
    const F_1_025: f64 = 0.780038821884455959358;

    #[test]
    fn pmf_examples() {
        assert_eq!(poisson_pmf(0.0, 0).unwrap(), 1.0);
        assert_eq!(poisson_pmf(0.0, 3).unwrap(), 0.0);
        assert!((poisson_pmf(0.4, 0).unwrap() - PMF_04_0).abs() < 1e-15);
        assert!((poisson_pmf(3.0, 3).unwrap() - PMF_3_3).abs() < 1e-15);
        assert!((poisson_pmf(36.0, 36).unwrap() / PMF_36_36 - 1.0).abs() < 1e-12);
        assert!((poisson_pmf(10.0, 50).unwrap() / PMF_10_50 - 1.0).abs() < 1e-12);
        assert!(poisson_pmf(-0.1, 0).is_err());
        assert!(poisson_pmf(f64::NAN, 0).is_err());
    }

    #[test]
    fn pmf_normalizes() {
        for mu in [1e-6, 0.4, 3.0, 12.5, 36.0, 50.0] {
            let s = PoissonSeries::new(mu).unwrap();
            let total: f64 = (0..=s.cutoff()).map(|n| s.pmf(n)).sum();
            assert!((total - 1.0).abs() < 1e-12, "μ={mu}: {total}");
        }
    }

    #[test]
    fn unit_efficiency_examples() {
        let f = f_class_unit_efficiency(1e-8).unwrap();
        assert!((f - 2.0 / 3.0).abs() < 1e-8);
        assert!((f_class_unit_efficiency(0.4).unwrap() - FUNIT_04).abs() < 1e-13);
        assert!((f_class_unit_efficiency(1.0).unwrap() - FUNIT_1).abs() < 1e-13);
        let f36 = f_class_unit_efficiency(36.0).unwrap();
        assert!((f36 - FUNIT_36).abs() < 1e-13);
        assert!(f36 > 0.970 && f36 < 0.980);
        assert!(f_class_unit_efficiency(0.0).is_err());
        assert!(f_class_unit_efficiency(-1.0).is_err());
    }

    #[test]
    fn unit_efficiency_strictly_increasing() {
        let grid = log_grid(1e-4, 40.0, 60).unwrap();
        let f: Vec<f64> = grid.iter().map(|&m| f_class_unit_efficiency(m).unwrap()).collect();
        assert!(f.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn threshold_worked_example() {
        let (n, g) = n_min_for_efficiency(3.0, 0.5).unwrap();
        assert_eq!(n, 3);
        assert!((g - GAMMA_3_05).abs() < 1e-14);
        assert!(g <= poisson_pmf(3.0, 3).unwrap());
        for mu in [0.01, 0.4, 3.0, 36.0] {
            assert_eq!(n_min_for_efficiency(mu, 1.0).unwrap(), (0, 0.0));
        }
        assert!(n_min_for_efficiency(3.0, 0.0).is_err());
        assert!(n_min_for_efficiency(3.0, 1.5).is_err());
    }

    #[test]
    fn f_class_examples() {
        let p = f_class(0.4, 1.0).unwrap();
        assert!((p.f_class - f_class_unit_efficiency(0.4).unwrap()).abs() <= 1e-12);
        let p = f_class(3.0, 0.5).unwrap();
        assert!((p.f_class - F_3_05).abs() < 1e-13);
        assert!((f_class(1.0, 0.25).unwrap().f_class - F_1_025).abs() < 1e-13);
        assert!(f_class(0.4, 0.02).unwrap().f_class > f_class(0.4, 0.10).unwrap().f_class);
    }

    #[test]
    fn curve_validation_and_order() {
        assert!(benchmark_curve(&[], 0.1, Execution::Sequential).is_err());
        assert!(benchmark_curve(&[1.0, 0.5], 0.1, Execution::Sequential).is_err());
        assert!(benchmark_curve(&[0.0, 0.5], 0.1, Execution::Sequential).is_err());
        let one = benchmark_curve(&[1e-6], 0.3, Execution::Sequential).unwrap();
        assert!((one[0].f_class - 2.0 / 3.0).abs() < 1e-6);
        let grid = log_grid(0.05, 30.0, 40).unwrap();
        let seq = benchmark_curve(&grid, 0.1, Execution::Sequential).unwrap();
        let par = benchmark_curve(&grid, 0.1, Execution::Parallel).unwrap();
        assert_eq!(seq, par);
        assert!(seq.iter().zip(&grid).all(|(p, m)| p.mu == *m));
    }

    #[test]
    fn curve_family_ordering() {
        let etas = [0.001, 0.01, 0.1, 0.25, 0.5, 1.0];
        let grid = log_grid(0.05, 30.0, 50).unwrap();
        let curves: Vec<Vec<BenchmarkPoint>> = etas
            .iter()
            .map(|&e| benchmark_curve(&grid, e, Execution::Sequential).unwrap())
            .collect();
        for k in 0..grid.len() {
            for w in curves.windows(2) {
                assert!(w[0][k].f_class >= w[1][k].f_class);
            }
        }
    }

    #[test]
    fn verdict() {
        let (r, p) = regime_verdict(0.96, 0.4, 0.10).unwrap();
        assert_eq!(r, Regime::Quantum);
        assert!(p.f_class < 0.93);
        assert_eq!(regime_verdict(0.70, 0.4, 0.10).unwrap().0, Regime::Classical);
    }

    #[test]
    fn csv_round_trip() {
        let grid = log_grid(0.01, 36.0, 25).unwrap();
        let pts = benchmark_curve(&grid, 0.02, Execution::Sequential).unwrap();
        let mut buf = Vec::new();
        write_curve_csv(&mut buf, &pts).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("mu,eta,n_min,gamma,f_class\n"));
        let back = read_curve_csv(&buf[..]).unwrap();
        assert_eq!(back.len(), pts.len());
        for (a, b) in pts.iter().zip(&back) {
            assert_eq!(a.n_min, b.n_min);
            assert!((a.f_class - b.f_class).abs() <= 1e-12 * a.f_class);
            assert!((a.gamma - b.gamma).abs() <= 1e-12);
        }
    }

    #[test]
    fn tail_identity() {
        for mu in [0.01, 0.4, 3.0, 10.0, 36.0, 50.0] {
            let s = PoissonSeries::new(mu).unwrap();
            for i in 0..=200usize {
                let head: f64 = (0..=i).map(|n| pmf_unchecked(mu, n as u32)).sum();
                assert!((s.tail(i + 1) + head - 1.0).abs() < 1e-12, "μ={mu} i={i}");
            }
        }
    }

    #[test]
    fn monotonicity_grid() {
        let mus = log_grid(0.01, 40.0, 20).unwrap();
        let etas = log_grid(0.001, 1.0, 20).unwrap();
        let table: Vec<Vec<f64>> = mus
            .iter()
            .map(|&m| etas.iter().map(|&e| f_class(m, e).unwrap().f_class).collect())
            .collect();
        for (i, row) in table.iter().enumerate() {
            for (j, &f) in row.iter().enumerate() {
                assert!((2.0 / 3.0..1.0).contains(&f));
                if j > 0 {
                    assert!(f <= row[j - 1] + 1e-15);
                }
                if i > 0 {
                    assert!(f >= table[i - 1][j] - 1e-15);
                }
            }
        }
    }

    proptest! {
        #[test]
        fn reduction_to_unit_efficiency(mu in 1e-6..40.0f64) {
            let a = f_class(mu, 1.0).unwrap().f_class;
            let b = f_class_unit_efficiency(mu).unwrap();
            prop_assert!((a - b).abs() <= 1e-12);
        }

        #[test]
        fn point_consistency(mu in 1e-4..40.0f64, eta in 1e-3..=1.0f64) {
            let p = f_class(mu, eta).unwrap();
            prop_assert!(p.gamma >= 0.0);
            prop_assert!(p.gamma <= poisson_pmf(mu, p.n_min).unwrap() + 1e-12);
            prop_assert!((p.reconstructed_eta().unwrap() - eta).abs() <= 1e-10);
            prop_assert!(p.f_class >= 2.0 / 3.0 && p.f_class < 1.0);
            prop_assert!(p.f_class >= f_class_unit_efficiency(mu).unwrap() - 1e-15);
        }
    }
}
