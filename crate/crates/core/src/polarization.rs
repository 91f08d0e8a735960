//! Linear-optics algebra for a single polarization qubit.
//!
//! Basis ordering is `(H, V)`. Waveplates are ideal linear retarders with the
//! fast axis at angle `θ` from horizontal and retardance `π` (HWP) or `π/2`
//! (QWP):
//!
//! ```text
//! J(θ, δ) = R(-θ) · diag(1, e^{iδ}) · R(θ),   R(θ) = [[cos θ, sin θ], [-sin θ, cos θ]]
//! ```
//!
//! so a HWP at `θ` reflects linear polarization about its fast axis (H goes
//! to the linear state at `2θ`) and the analyzer fringe has period `4θ`. The
//! analyzer is QWP, then HWP, then a PBS whose transmitted port passes `H`.

use std::fmt;
use std::ops::Mul;
use std::str::FromStr;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

pub type C64 = Complex64;

const NORM_TOL: f64 = 1e-12;
/// Tolerance for Hermiticity, trace and positivity checks on density matrices.
pub const RHO_TOL: f64 = 1e-10;
const PHASE_TOL: f64 = 1e-10;

fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

/// A 2×2 complex matrix, row-major.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mat2(pub [[C64; 2]; 2]);

impl Mat2 {
    pub fn identity() -> Self {
        Mat2([[c(1.0, 0.0), c(0.0, 0.0)], [c(0.0, 0.0), c(1.0, 0.0)]])
    }

    pub fn zero() -> Self {
        Mat2([[C64::default(); 2]; 2])
    }

    pub fn diag(a: C64, b: C64) -> Self {
        Mat2([[a, C64::default()], [C64::default(), b]])
    }

    /// `|ψ⟩⟨ψ|` for an arbitrary (not necessarily normalized) vector.
    pub fn outer(a: C64, b: C64) -> Self {
        Mat2([[a * a.conj(), a * b.conj()], [b * a.conj(), b * b.conj()]])
    }

    pub fn adjoint(&self) -> Self {
        let m = &self.0;
        Mat2([[m[0][0].conj(), m[1][0].conj()], [m[0][1].conj(), m[1][1].conj()]])
    }

    pub fn trace(&self) -> C64 {
        self.0[0][0] + self.0[1][1]
    }

    pub fn scale(&self, s: C64) -> Self {
        let m = &self.0;
        Mat2([[m[0][0] * s, m[0][1] * s], [m[1][0] * s, m[1][1] * s]])
    }

    pub fn apply(&self, v: [C64; 2]) -> [C64; 2] {
        let m = &self.0;
        [m[0][0] * v[0] + m[0][1] * v[1], m[1][0] * v[0] + m[1][1] * v[1]]
    }

    /// Largest elementwise modulus of `self - other`.
    pub fn max_abs_diff(&self, other: &Mat2) -> f64 {
        let mut d: f64 = 0.0;
        for i in 0..2 {
            for j in 0..2 {
                d = d.max((self.0[i][j] - other.0[i][j]).norm());
            }
        }
        d
    }

    pub fn is_unitary(&self, tol: f64) -> bool {
        (self.adjoint() * *self).max_abs_diff(&Mat2::identity()) <= tol
    }
}

impl Mul for Mat2 {
    type Output = Mat2;

    fn mul(self, rhs: Mat2) -> Mat2 {
        let a = &self.0;
        let b = &rhs.0;
        let mut out = Mat2::zero();
        for i in 0..2 {
            for j in 0..2 {
                out.0[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j];
            }
        }
        out
    }
}

/// A normalized pure polarization state `a_h|H⟩ + a_v|V⟩`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PureQubit {
    a_h: C64,
    a_v: C64,
}

impl PureQubit {
    /// Normalizes the given amplitude pair. Fails on the zero vector.
    pub fn new(a_h: C64, a_v: C64) -> Result<Self> {
        let norm = (a_h.norm_sqr() + a_v.norm_sqr()).sqrt();
        if !norm.is_finite() || norm == 0.0 {
            return Err(invalid("qubit amplitudes must be finite and not both zero"));
        }
        Ok(PureQubit {
            a_h: a_h / norm,
            a_v: a_v / norm,
        })
    }

    /// Accepts amplitudes that are already normalized within `1e-12`.
    pub fn from_normalized(a_h: C64, a_v: C64) -> Result<Self> {
        let n = a_h.norm_sqr() + a_v.norm_sqr();
        if (n - 1.0).abs() > NORM_TOL {
            return Err(invalid(format!("amplitudes not normalized: |a_h|²+|a_v|² = {n}")));
        }
        Ok(PureQubit { a_h, a_v })
    }

    /// Linear polarization at angle `theta` from horizontal.
    pub fn linear(theta: f64) -> Self {
        PureQubit {
            a_h: c(theta.cos(), 0.0),
            a_v: c(theta.sin(), 0.0),
        }
    }

    pub fn a_h(&self) -> C64 {
        self.a_h
    }

    pub fn a_v(&self) -> C64 {
        self.a_v
    }

    pub fn amplitudes(&self) -> [C64; 2] {
        [self.a_h, self.a_v]
    }

    /// `⟨self|other⟩`.
    pub fn inner(&self, other: &PureQubit) -> C64 {
        self.a_h.conj() * other.a_h + self.a_v.conj() * other.a_v
    }

    pub fn overlap_sqr(&self, other: &PureQubit) -> f64 {
        self.inner(other).norm_sqr()
    }

    /// Equality up to an unobservable global phase.
    pub fn same_up_to_phase(&self, other: &PureQubit) -> bool {
        (self.inner(other).norm() - 1.0).abs() <= PHASE_TOL
    }

    pub fn apply(&self, u: &Mat2) -> Result<PureQubit> {
        let [h, v] = u.apply(self.amplitudes());
        PureQubit::new(h, v)
    }

    /// Multiplies the V amplitude by `e^{iφ}`.
    pub fn with_relative_phase(&self, phi: f64) -> PureQubit {
        PureQubit {
            a_h: self.a_h,
            a_v: self.a_v * C64::from_polar(1.0, phi),
        }
    }

    pub fn density(&self) -> DensityMatrix2 {
        DensityMatrix2 {
            m: Mat2::outer(self.a_h, self.a_v),
        }
    }
}

/// The six cardinal states on the Poincaré sphere.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum StateLabel {
    H,
    V,
    D,
    A,
    R,
    L,
}

impl StateLabel {
    pub const ALL: [StateLabel; 6] = [
        StateLabel::H,
        StateLabel::V,
        StateLabel::D,
        StateLabel::A,
        StateLabel::R,
        StateLabel::L,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            StateLabel::H => "H",
            StateLabel::V => "V",
            StateLabel::D => "D",
            StateLabel::A => "A",
            StateLabel::R => "R",
            StateLabel::L => "L",
        }
    }

    pub fn state(self) -> PureQubit {
        canonical_state(self)
    }
}

impl fmt::Display for StateLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for StateLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "H" | "h" => Ok(StateLabel::H),
            "V" | "v" => Ok(StateLabel::V),
            "D" | "d" => Ok(StateLabel::D),
            "A" | "a" => Ok(StateLabel::A),
            "R" | "r" => Ok(StateLabel::R),
            "L" | "l" => Ok(StateLabel::L),
            other => Err(invalid(format!("unknown state label '{other}' (expected H,V,D,A,R,L)"))),
        }
    }
}

pub fn canonical_state(label: StateLabel) -> PureQubit {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let (h, v) = match label {
        StateLabel::H => (c(1.0, 0.0), c(0.0, 0.0)),
        StateLabel::V => (c(0.0, 0.0), c(1.0, 0.0)),
        StateLabel::D => (c(s, 0.0), c(s, 0.0)),
        StateLabel::A => (c(s, 0.0), c(-s, 0.0)),
        StateLabel::R => (c(s, 0.0), c(0.0, s)),
        StateLabel::L => (c(s, 0.0), c(0.0, -s)),
    };
    PureQubit { a_h: h, a_v: v }
}

/// 2×2 Hermitian, unit-trace, positive semidefinite matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DensityMatrixRepr", into = "DensityMatrixRepr")]
pub struct DensityMatrix2 {
    m: Mat2,
}

/// Serialized form: separate real and imaginary parts, row-major.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DensityMatrixRepr {
    pub real: [[f64; 2]; 2],
    pub imag: [[f64; 2]; 2],
}

impl From<DensityMatrix2> for DensityMatrixRepr {
    fn from(rho: DensityMatrix2) -> Self {
        let m = rho.m.0;
        DensityMatrixRepr {
            real: [[m[0][0].re, m[0][1].re], [m[1][0].re, m[1][1].re]],
            imag: [[m[0][0].im, m[0][1].im], [m[1][0].im, m[1][1].im]],
        }
    }
}

impl TryFrom<DensityMatrixRepr> for DensityMatrix2 {
    type Error = Error;

    fn try_from(r: DensityMatrixRepr) -> Result<Self> {
        let m = Mat2([
            [c(r.real[0][0], r.imag[0][0]), c(r.real[0][1], r.imag[0][1])],
            [c(r.real[1][0], r.imag[1][0]), c(r.real[1][1], r.imag[1][1])],
        ]);
        DensityMatrix2::new(m)
    }
}

fn hermitian_eigenvalues(m: &Mat2) -> (f64, f64) {
    let a = m.0[0][0].re;
    let d = m.0[1][1].re;
    let b = m.0[0][1];
    let mean = 0.5 * (a + d);
    let radius = (0.25 * (a - d) * (a - d) + b.norm_sqr()).sqrt();
    (mean - radius, mean + radius)
}

impl DensityMatrix2 {
    pub fn new(m: Mat2) -> Result<Self> {
        validate_density(&m)?;
        Ok(DensityMatrix2 { m })
    }

    /// Wraps a matrix without validation. Callers must guarantee the invariants.
    pub(crate) fn from_raw(m: Mat2) -> Self {
        DensityMatrix2 { m }
    }

    pub fn maximally_mixed() -> Self {
        DensityMatrix2 {
            m: Mat2::identity().scale(c(0.5, 0.0)),
        }
    }

    /// `ρ = ½(I + x σx + y σy + z σz)`; requires `|r| ≤ 1`.
    pub fn from_bloch(r: [f64; 3]) -> Result<Self> {
        DensityMatrix2::new(bloch_matrix(r))
    }

    pub fn matrix(&self) -> &Mat2 {
        &self.m
    }

    pub fn entry(&self, i: usize, j: usize) -> C64 {
        self.m.0[i][j]
    }

    /// Bloch vector `(⟨σx⟩, ⟨σy⟩, ⟨σz⟩)`.
    pub fn bloch(&self) -> [f64; 3] {
        bloch_of(&self.m)
    }

    pub fn eigenvalues(&self) -> (f64, f64) {
        hermitian_eigenvalues(&self.m)
    }

    pub fn purity(&self) -> f64 {
        (self.m * self.m).trace().re
    }

    /// `½‖ρ − σ‖₁`, which for qubits is half the Bloch-vector distance.
    pub fn trace_distance(&self, other: &DensityMatrix2) -> f64 {
        let a = self.bloch();
        let b = other.bloch();
        0.5 * ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
    }

    pub fn validate(&self) -> Result<()> {
        validate_density(&self.m)
    }
}

pub(crate) fn bloch_matrix(r: [f64; 3]) -> Mat2 {
    let [x, y, z] = r;
    Mat2([
        [c(0.5 * (1.0 + z), 0.0), c(0.5 * x, -0.5 * y)],
        [c(0.5 * x, 0.5 * y), c(0.5 * (1.0 - z), 0.0)],
    ])
}

pub(crate) fn bloch_of(m: &Mat2) -> [f64; 3] {
    let off = m.0[1][0];
    [2.0 * off.re, 2.0 * off.im, (m.0[0][0] - m.0[1][1]).re]
}

/// Checks Hermiticity, unit trace and positivity within [`RHO_TOL`].
pub fn validate_density(m: &Mat2) -> Result<()> {
    for row in &m.0 {
        for z in row {
            if !z.re.is_finite() || !z.im.is_finite() {
                return Err(Error::InvalidDensityMatrix("non-finite entry".into()));
            }
        }
    }
    let herm = m.max_abs_diff(&m.adjoint());
    if herm > RHO_TOL {
        return Err(Error::InvalidDensityMatrix(format!("not Hermitian (deviation {herm:.3e})")));
    }
    let tr = m.trace();
    if (tr.re - 1.0).abs() > RHO_TOL || tr.im.abs() > RHO_TOL {
        return Err(Error::InvalidDensityMatrix(format!("trace {tr} ≠ 1")));
    }
    let (lo, _) = hermitian_eigenvalues(m);
    if lo < -RHO_TOL {
        return Err(Error::InvalidDensityMatrix(format!("negative eigenvalue {lo:.3e}")));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Waveplate {
    HalfWave,
    QuarterWave,
}

impl Waveplate {
    pub fn retardance(self) -> f64 {
        match self {
            Waveplate::HalfWave => std::f64::consts::PI,
            Waveplate::QuarterWave => std::f64::consts::FRAC_PI_2,
        }
    }
}

/// A waveplate with its fast axis at `angle` radians from horizontal, in `[0, π)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WaveplateSetting {
    pub kind: Waveplate,
    angle: f64,
}

impl WaveplateSetting {
    pub fn new(kind: Waveplate, angle: f64) -> Self {
        WaveplateSetting {
            kind,
            angle: normalize_angle(angle),
        }
    }

    pub fn half_wave(angle: f64) -> Self {
        Self::new(Waveplate::HalfWave, angle)
    }

    pub fn quarter_wave(angle: f64) -> Self {
        Self::new(Waveplate::QuarterWave, angle)
    }

    pub fn angle(&self) -> f64 {
        self.angle
    }
}

fn normalize_angle(angle: f64) -> f64 {
    let a = angle.rem_euclid(std::f64::consts::PI);
    // rem_euclid can round up to exactly π
    if a >= std::f64::consts::PI {
        0.0
    } else {
        a
    }
}

pub fn jones_matrix(plate: &WaveplateSetting) -> Mat2 {
    let (s, co) = plate.angle.sin_cos();
    let e = C64::from_polar(1.0, plate.kind.retardance());
    let one = c(1.0, 0.0);
    let cs = c(co * s, 0.0) * (one - e);
    Mat2([
        [c(co * co, 0.0) + e * (s * s), cs],
        [cs, c(s * s, 0.0) + e * (co * co)],
    ])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Port {
    /// PBS transmitted port, passes `H`.
    Transmitted,
    /// PBS reflected port, passes `V`.
    Reflected,
}

impl Port {
    pub fn as_str(self) -> &'static str {
        match self {
            Port::Transmitted => "transmitted",
            Port::Reflected => "reflected",
        }
    }

    pub fn other(self) -> Port {
        match self {
            Port::Transmitted => Port::Reflected,
            Port::Reflected => Port::Transmitted,
        }
    }

    fn projector(self) -> Mat2 {
        match self {
            Port::Transmitted => Mat2::diag(c(1.0, 0.0), c(0.0, 0.0)),
            Port::Reflected => Mat2::diag(c(0.0, 0.0), c(1.0, 0.0)),
        }
    }
}

impl FromStr for Port {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "transmitted" | "T" | "t" => Ok(Port::Transmitted),
            "reflected" | "R" | "r" => Ok(Port::Reflected),
            other => Err(invalid(format!("unknown port '{other}'"))),
        }
    }
}

/// Analyzer configuration: optional QWP, then optional HWP, then a PBS port.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeasurementSetting {
    qwp: Option<WaveplateSetting>,
    hwp: Option<WaveplateSetting>,
    pub port: Port,
}

impl MeasurementSetting {
    /// Builds a setting from an ordered plate list (light traverses them in order).
    /// At most two plates, a QWP followed by a HWP.
    pub fn new(plates: &[WaveplateSetting], port: Port) -> Result<Self> {
        let mut qwp = None;
        let mut hwp = None;
        match plates {
            [] => {}
            [p] => match p.kind {
                Waveplate::QuarterWave => qwp = Some(*p),
                Waveplate::HalfWave => hwp = Some(*p),
            },
            [a, b] if a.kind == Waveplate::QuarterWave && b.kind == Waveplate::HalfWave => {
                qwp = Some(*a);
                hwp = Some(*b);
            }
            _ => {
                return Err(invalid(
                    "analyzer takes at most two plates, ordered QWP then HWP",
                ))
            }
        }
        Ok(MeasurementSetting { qwp, hwp, port })
    }

    pub fn bare(port: Port) -> Self {
        MeasurementSetting {
            qwp: None,
            hwp: None,
            port,
        }
    }

    pub fn hwp(angle: f64) -> Self {
        MeasurementSetting {
            qwp: None,
            hwp: Some(WaveplateSetting::half_wave(angle)),
            port: Port::Transmitted,
        }
    }

    pub fn qwp_hwp(qwp_angle: f64, hwp_angle: f64) -> Self {
        MeasurementSetting {
            qwp: Some(WaveplateSetting::quarter_wave(qwp_angle)),
            hwp: Some(WaveplateSetting::half_wave(hwp_angle)),
            port: Port::Transmitted,
        }
    }

    /// Transmitted-port setting whose projector is `|label⟩⟨label|`.
    pub fn canonical(label: StateLabel) -> Self {
        use std::f64::consts::{FRAC_PI_4, FRAC_PI_8};
        let q = |a| Some(WaveplateSetting::quarter_wave(a));
        let h = |a| Some(WaveplateSetting::half_wave(a));
        let (qwp, hwp) = match label {
            StateLabel::H => (None, None),
            StateLabel::V => (None, h(FRAC_PI_4)),
            StateLabel::D => (None, h(FRAC_PI_8)),
            StateLabel::A => (None, h(-FRAC_PI_8)),
            StateLabel::R => (q(FRAC_PI_4), None),
            StateLabel::L => (q(FRAC_PI_4), h(FRAC_PI_4)),
        };
        MeasurementSetting {
            qwp,
            hwp,
            port: Port::Transmitted,
        }
    }

    pub fn qwp_plate(&self) -> Option<WaveplateSetting> {
        self.qwp
    }

    pub fn hwp_plate(&self) -> Option<WaveplateSetting> {
        self.hwp
    }

    pub fn plates(&self) -> Vec<WaveplateSetting> {
        self.qwp.into_iter().chain(self.hwp).collect()
    }

    pub fn with_port(mut self, port: Port) -> Self {
        self.port = port;
        self
    }

    /// Combined analyzer unitary `J_hwp · J_qwp`.
    pub fn unitary(&self) -> Mat2 {
        let mut u = Mat2::identity();
        if let Some(p) = &self.qwp {
            u = jones_matrix(p) * u;
        }
        if let Some(p) = &self.hwp {
            u = jones_matrix(p) * u;
        }
        u
    }

    /// Effective projector `U† P U` in the input frame.
    pub fn projector(&self) -> Mat2 {
        let u = self.unitary();
        u.adjoint() * self.port.projector() * u
    }

    /// Canonical label whose projector this setting realizes, if any.
    pub fn canonical_label(&self) -> Option<StateLabel> {
        let p = self.projector();
        StateLabel::ALL
            .into_iter()
            .find(|l| p.max_abs_diff(&l.state().density().m) < 1e-9)
    }
}

/// `tr(Π ρ)` for the analyzer projector `Π`.
pub fn projection_probability(state: &DensityMatrix2, setting: &MeasurementSetting) -> Result<f64> {
    state.validate()?;
    Ok(projection_unchecked(state.matrix(), &setting.projector()))
}

pub(crate) fn projection_unchecked(rho: &Mat2, projector: &Mat2) -> f64 {
    (*projector * *rho).trace().re.clamp(0.0, 1.0)
}

/// `⟨ψ|ρ|ψ⟩`.
pub fn fidelity(target: &PureQubit, rho: &DensityMatrix2) -> Result<f64> {
    rho.validate()?;
    Ok(fidelity_unchecked(target, rho))
}

pub(crate) fn fidelity_unchecked(target: &PureQubit, rho: &DensityMatrix2) -> f64 {
    let v = rho.matrix().apply(target.amplitudes());
    (target.a_h.conj() * v[0] + target.a_v.conj() * v[1]).re.clamp(0.0, 1.0)
}
