//! Closed-form Hamiltonian families on the circle, their derivative jets,
//! Legendre duals, and sampled checks of the standing hypotheses.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// One harmonic `c cos 2π(fx x + ft t) + s sin 2π(fx x + ft t)`.
///
/// Serialized as `[fx, c, s]` or `[fx, ft, c, s]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>", bound = "")]
pub struct PotentialTerm<T: Real> {
    pub freq_x: i32,
    pub freq_t: i32,
    pub cos: T,
    pub sin: T,
}

impl<T: Real> TryFrom<Vec<f64>> for PotentialTerm<T> {
    type Error = String;

    fn try_from(v: Vec<f64>) -> std::result::Result<Self, String> {
        let int = |f: f64| -> std::result::Result<i32, String> {
            if f.fract() != 0.0 || f.abs() > 1e6 {
                Err(format!("frequency {f} is not an integer"))
            } else {
                Ok(f as i32)
            }
        };
        match v.as_slice() {
            [fx, c, s] => Ok(Self { freq_x: int(*fx)?, freq_t: 0, cos: T::lit(*c), sin: T::lit(*s) }),
            [fx, ft, c, s] => Ok(Self {
                freq_x: int(*fx)?,
                freq_t: int(*ft)?,
                cos: T::lit(*c),
                sin: T::lit(*s),
            }),
            _ => Err(format!("potential term must have 3 or 4 entries, got {}", v.len())),
        }
    }
}

impl<T: Real> From<PotentialTerm<T>> for Vec<f64> {
    fn from(t: PotentialTerm<T>) -> Self {
        if t.freq_t == 0 {
            vec![t.freq_x as f64, t.cos.to_f64_lossy(), t.sin.to_f64_lossy()]
        } else {
            vec![t.freq_x as f64, t.freq_t as f64, t.cos.to_f64_lossy(), t.sin.to_f64_lossy()]
        }
    }
}

/// Values of `V` and its derivatives at one point.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct PotentialJet<T> {
    pub v: T,
    pub v_x: T,
    pub v_xx: T,
    pub v_t: T,
}

/// Finite trigonometric series on the torus (or torus × circle).
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct PotentialSpec<T: Real> {
    pub terms: Vec<PotentialTerm<T>>,
}

impl<T: Real> PotentialSpec<T> {
    pub fn zero() -> Self {
        Self { terms: Vec::new() }
    }

    pub fn from_terms(terms: &[(i32, f64, f64)]) -> Self {
        Self {
            terms: terms
                .iter()
                .map(|&(f, c, s)| PotentialTerm { freq_x: f, freq_t: 0, cos: T::lit(c), sin: T::lit(s) })
                .collect(),
        }
    }

    /// Terms `(freq_x, freq_t, cos, sin)` of `cos(2π(fx x + ft t))` and its sine.
    pub fn from_terms_t(terms: &[(i32, i32, f64, f64)]) -> Self {
        Self {
            terms: terms
                .iter()
                .map(|&(f, g, c, s)| PotentialTerm { freq_x: f, freq_t: g, cos: T::lit(c), sin: T::lit(s) })
                .collect(),
        }
    }

    /// `V(x) = -sin²(2πx)(1 + cos(2πx)/2)`, maxima at 0 and 1/2 with
    /// curvatures `-12π²` and `-4π²`.
    pub fn benchmark() -> Self {
        Self::from_terms(&[(0, -0.5, 0.0), (1, -0.125, 0.0), (2, 0.5, 0.0), (3, 0.125, 0.0)])
    }

    pub fn is_time_dependent(&self) -> bool {
        self.terms.iter().any(|t| t.freq_t != 0)
    }

    pub fn max_freq_x(&self) -> i32 {
        self.terms.iter().map(|t| t.freq_x.abs()).max().unwrap_or(0)
    }

    pub fn jet(&self, x: T, t: T) -> PotentialJet<T> {
        self.jet_by(x, t, |term| (term.freq_x, term.freq_t))
    }

    #[inline]
    pub fn value(&self, x: T, t: T) -> T {
        self.value_by(x, t, |term| (term.freq_x, term.freq_t))
    }

    /// Jet with the `(x, t)` frequencies of each term given by `freqs`.
    /// Phases are integer combinations of the wrapped `x` and `t`, so the
    /// result is exactly 1-periodic in both.
    fn jet_by(&self, x: T, t: T, freqs: impl Fn(&PotentialTerm<T>) -> (i32, i32)) -> PotentialJet<T> {
        let tau = T::two_pi();
        let x = x.wrap_unit();
        let t = t.wrap_unit();
        let mut out = PotentialJet::default();
        for term in &self.terms {
            let (fx, ft) = freqs(term);
            let (fx, ft) = (T::lit(fx as f64), T::lit(ft as f64));
            let phase = (fx * x + ft * t).wrap_unit();
            let (s, c) = (tau * phase).sin_cos();
            let even = term.cos * c + term.sin * s;
            let odd = term.sin * c - term.cos * s;
            out.v = out.v + even;
            out.v_x = out.v_x + tau * fx * odd;
            out.v_xx = out.v_xx - tau * tau * fx * fx * even;
            out.v_t = out.v_t + tau * ft * odd;
        }
        out
    }

    #[inline]
    fn value_by(&self, x: T, t: T, freqs: impl Fn(&PotentialTerm<T>) -> (i32, i32)) -> T {
        let tau = T::two_pi();
        let x = x.wrap_unit();
        let t = t.wrap_unit();
        self.terms.iter().fold(T::zero(), |acc, term| {
            let (fx, ft) = freqs(term);
            let phase = (T::lit(fx as f64) * x + T::lit(ft as f64) * t).wrap_unit();
            let (s, c) = (tau * phase).sin_cos();
            acc + term.cos * c + term.sin * s
        })
    }

    /// `V(x + t/k)` through the integer frequencies `(f, f/k)`, when every
    /// `f` is a multiple of `k`.
    fn wave_jet(&self, x: T, t: T, k: i32) -> Option<PotentialJet<T>> {
        self.terms.iter().all(|term| term.freq_x % k == 0 && term.freq_t == 0).then(|| {
            self.jet_by(x, t, |term| (term.freq_x, term.freq_x / k))
        })
    }

    fn wave_value(&self, x: T, t: T, k: i32) -> Option<T> {
        self.terms.iter().all(|term| term.freq_x % k == 0 && term.freq_t == 0).then(|| {
            self.value_by(x, t, |term| (term.freq_x, term.freq_x / k))
        })
    }
}

/// Which closed-form Hamiltonian the model evaluates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Family {
    /// `H = p²/2 + V(x)`
    Mechanical,
    /// `H = (p + P)²/2 + V(x, t)`
    ShiftedKinetic,
    /// `H = p²/2 - p/k + V(x + t/k)`
    TravelingWave,
}

/// Derivative jet of `H` at `(x, p, t)`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Jet<T> {
    pub h: T,
    pub h_p: T,
    pub h_x: T,
    pub h_t: T,
    pub h_pp: T,
    pub h_xp: T,
    pub h_xx: T,
}

/// `L(x, v, t) = (m/2)(v - β)² - a(v - β) - W(x - βt, t)` for some `W`.
/// Then `W_y = H_x`, `W_yy = H_xx` and
/// `H(x, p, t) = H(x, 0, t) + p²/(2m) + (β + a/m) p`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QuadraticFrame<T> {
    pub mass: T,
    pub drift: T,
    pub tilt: T,
}

impl<T: Real> QuadraticFrame<T> {
    /// Linear coefficient of `H(x, p, t) - H(x, 0, t)` in `p`.
    pub fn momentum_slope(&self) -> T {
        self.drift + self.tilt / self.mass
    }
}

/// Anything the solvers can treat as a convex, time-periodic Hamiltonian
/// on `T¹ × R × S¹`.
pub trait Hamiltonian<T: Real>: Sync {
    fn jet(&self, x: T, p: T, t: T) -> Jet<T>;

    fn value(&self, x: T, p: T, t: T) -> T {
        self.jet(x, p, t).h
    }

    /// `(L, L_v)` at `(x, v, t)`.
    fn lagrangian(&self, x: T, v: T, t: T) -> (T, T);

    fn lagrangian_value(&self, x: T, v: T, t: T) -> T {
        self.lagrangian(x, v, t).0
    }

    /// Momentum minimizing `H(x, ·, t)`; the one with zero velocity.
    fn min_momentum(&self, x: T, t: T) -> T {
        self.lagrangian(x, T::zero(), t).1
    }

    /// Typical velocity of the Aubry orbits; kernels refine their velocity
    /// set around it.
    fn drift_hint(&self) -> T {
        T::zero()
    }

    /// Set when `L` is quadratic in the velocity; see [`QuadraticFrame`].
    fn quadratic_frame(&self) -> Option<QuadraticFrame<T>> {
        None
    }
}

/// A built-in Hamiltonian family with its potential and parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct HamiltonianModel<T: Real> {
    pub family: Family,
    #[serde(default = "PotentialSpec::zero")]
    pub potential: PotentialSpec<T>,
    #[serde(default = "T::zero")]
    pub momentum_shift: T,
    #[serde(default = "default_wind")]
    pub wind: u32,
    #[serde(default = "default_growth")]
    pub growth_constant: T,
    #[serde(default = "default_dimension")]
    pub dimension: usize,
    #[serde(default = "default_floor")]
    pub convexity_floor: T,
}

fn default_wind() -> u32 {
    1
}
fn default_growth<T: Real>() -> T {
    T::lit(8.0)
}
fn default_dimension() -> usize {
    1
}
fn default_floor<T: Real>() -> T {
    T::lit(1e-8)
}

impl<T: Real> HamiltonianModel<T> {
    fn base(family: Family, potential: PotentialSpec<T>) -> Self {
        Self {
            family,
            potential,
            momentum_shift: T::zero(),
            wind: 1,
            growth_constant: default_growth(),
            dimension: 1,
            convexity_floor: default_floor(),
        }
    }

    pub fn mechanical(potential: PotentialSpec<T>) -> Self {
        Self::base(Family::Mechanical, potential)
    }

    pub fn shifted_kinetic(potential: PotentialSpec<T>, shift: T) -> Self {
        Self { momentum_shift: shift, ..Self::base(Family::ShiftedKinetic, potential) }
    }

    pub fn traveling_wave(potential: PotentialSpec<T>, wind: u32) -> Self {
        Self { wind, ..Self::base(Family::TravelingWave, potential) }
    }

    /// Structural checks the closed forms rely on.
    pub fn validate(&self) -> Result<()> {
        if self.dimension != 1 {
            return Err(Error::Config(format!("model.dimension = {} (only 1 is supported)", self.dimension)));
        }
        if !(self.growth_constant > T::zero()) {
            return Err(Error::Config("model.growth_constant must be positive".into()));
        }
        match self.family {
            Family::Mechanical if self.potential.is_time_dependent() => {
                Err(Error::Config("model.potential: Mechanical potentials cannot depend on t".into()))
            }
            Family::TravelingWave => {
                if self.wind == 0 {
                    return Err(Error::Config("model.wind must be a positive integer".into()));
                }
                if self.potential.is_time_dependent() {
                    return Err(Error::Config("model.potential: TravelingWave potentials cannot depend on t".into()));
                }
                let k = self.wind as i32;
                if let Some(t) = self.potential.terms.iter().find(|t| t.freq_x % k != 0) {
                    return Err(Error::Config(format!(
                        "model.potential: frequency {} is not a multiple of wind {k}",
                        t.freq_x
                    )));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    fn wave_shift(&self, t: T) -> T {
        t / T::lit(self.wind as f64)
    }

    /// `V` as seen by the family at `(x, t)`.
    pub fn potential_jet(&self, x: T, t: T) -> PotentialJet<T> {
        match self.family {
            Family::TravelingWave => self.potential.wave_jet(x, t, self.wind as i32).unwrap_or_else(|| {
                let mut j = self.potential.jet(x + self.wave_shift(t), T::zero());
                j.v_t = j.v_x / T::lit(self.wind as f64);
                j
            }),
            _ => self.potential.jet(x, t),
        }
    }

    pub fn potential_value(&self, x: T, t: T) -> T {
        match self.family {
            Family::TravelingWave => self
                .potential
                .wave_value(x, t, self.wind as i32)
                .unwrap_or_else(|| self.potential.value(x + self.wave_shift(t), T::zero())),
            _ => self.potential.value(x, t),
        }
    }

    /// Additive momentum offset `s` such that `H = (p + s)²/2 + const + V`.
    fn kinetic_offset(&self) -> T {
        match self.family {
            Family::Mechanical => T::zero(),
            Family::ShiftedKinetic => self.momentum_shift,
            Family::TravelingWave => -T::one() / T::lit(self.wind as f64),
        }
    }

    /// Constant term in the kinetic part: `-1/(2k²)` for the traveling wave.
    fn kinetic_constant(&self) -> T {
        match self.family {
            Family::TravelingWave => {
                let k = T::lit(self.wind as f64);
                -T::one() / (T::lit(2.0) * k * k)
            }
            _ => T::zero(),
        }
    }
}

impl<T: Real> Hamiltonian<T> for HamiltonianModel<T> {
    fn jet(&self, x: T, p: T, t: T) -> Jet<T> {
        let v = self.potential_jet(x, t);
        let q = p + self.kinetic_offset();
        Jet {
            h: T::lit(0.5) * q * q + self.kinetic_constant() + v.v,
            h_p: q,
            h_x: v.v_x,
            h_t: v.v_t,
            h_pp: T::one(),
            h_xp: T::zero(),
            h_xx: v.v_xx,
        }
    }

    fn value(&self, x: T, p: T, t: T) -> T {
        let q = p + self.kinetic_offset();
        T::lit(0.5) * q * q + self.kinetic_constant() + self.potential_value(x, t)
    }

    fn lagrangian(&self, x: T, v: T, t: T) -> (T, T) {
        // p = v - offset maximizes p v - H.
        let s = self.kinetic_offset();
        let p = v - s;
        (T::lit(0.5) * v * v - s * v - self.kinetic_constant() - self.potential_value(x, t), p)
    }

    fn min_momentum(&self, _x: T, _t: T) -> T {
        -self.kinetic_offset()
    }

    fn drift_hint(&self) -> T {
        match self.family {
            Family::TravelingWave => -T::one() / T::lit(self.wind as f64),
            Family::ShiftedKinetic => self.momentum_shift,
            Family::Mechanical => T::zero(),
        }
    }

    fn quadratic_frame(&self) -> Option<QuadraticFrame<T>> {
        let (drift, tilt) = match self.family {
            Family::Mechanical => (T::zero(), T::zero()),
            Family::ShiftedKinetic => (T::zero(), self.momentum_shift),
            Family::TravelingWave => (-T::one() / T::lit(self.wind as f64), T::zero()),
        };
        Some(QuadraticFrame { mass: T::one(), drift, tilt })
    }
}

/// `H` and its jet at a point; thin wrapper for call sites that only hold a
/// model value.
pub fn evaluate_jet<T: Real>(model: &impl Hamiltonian<T>, x: T, p: T, t: T) -> Jet<T> {
    model.jet(x, p, t)
}

/// `(L, L_v)` at `(x, v, t)`.
pub fn legendre<T: Real>(model: &impl Hamiltonian<T>, x: T, v: T, t: T) -> (T, T) {
    model.lagrangian(x, v, t)
}

/// Lattice used by [`verify_hypotheses`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SampleDensity {
    pub nx: usize,
    pub np: usize,
    pub nt: usize,
}

impl Default for SampleDensity {
    fn default() -> Self {
        Self { nx: 128, np: 32, nt: 32 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HypothesisReport<T> {
    pub min_hpp: T,
    pub convexity_pass: bool,
    /// Minimum of `(H_p p - H + inf H(·,0,·)) K - |H_x|` over `|p| ∈ [K, 3K]`.
    pub min_growth: T,
    pub growth_pass: bool,
    pub periodicity_residual: T,
    pub periodicity_pass: bool,
}

impl<T> HypothesisReport<T> {
    pub fn all_pass(&self) -> bool {
        self.convexity_pass && self.growth_pass && self.periodicity_pass
    }
}

/// Samples convexity, the growth inequality on the band `|p| ∈ [K, 3K]`,
/// and periodicity in `x` and `t`.
pub fn verify_hypotheses<T: Real>(model: &HamiltonianModel<T>, density: SampleDensity) -> Result<HypothesisReport<T>> {
    model.validate()?;
    let k = model.growth_constant;
    let (nx, np, nt) = (density.nx.max(1), density.np.max(2), density.nt.max(1));
    let xs: Vec<T> = (0..nx).map(|i| T::from_usize_lossy(i) / T::from_usize_lossy(nx)).collect();
    let ts: Vec<T> = (0..nt).map(|i| T::from_usize_lossy(i) / T::from_usize_lossy(nt)).collect();

    let mut inf_h0 = T::infinity();
    for &x in &xs {
        for &t in &ts {
            inf_h0 = inf_h0.min(model.value(x, T::zero(), t));
        }
    }

    let mut min_hpp = T::infinity();
    let mut min_growth = T::infinity();
    let mut periodicity = T::zero();
    let three = T::lit(3.0);
    for &x in &xs {
        for &t in &ts {
            for ip in 0..np {
                let frac = T::from_usize_lossy(ip) / T::from_usize_lossy(np - 1);
                let mag = k + (three * k - k) * frac;
                for p in [mag, -mag] {
                    let j = model.jet(x, p, t);
                    min_hpp = min_hpp.min(j.h_pp);
                    let g = (j.h_p * p - j.h + inf_h0) * k - j.h_x.abs();
                    min_growth = min_growth.min(g);
                    let shifted_t = (model.value(x, p, t + T::one()) - j.h).abs();
                    let shifted_x = (model.value(x + T::one(), p, t) - j.h).abs();
                    periodicity = periodicity.max(shifted_t).max(shifted_x);
                }
            }
        }
    }
    let scale = T::one() + k * k;
    Ok(HypothesisReport {
        min_hpp,
        convexity_pass: min_hpp >= model.convexity_floor,
        min_growth,
        growth_pass: min_growth >= T::zero(),
        periodicity_residual: periodicity,
        periodicity_pass: periodicity <= T::lit(64.0) * T::epsilon() * scale,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn bench() -> HamiltonianModel<f64> {
        HamiltonianModel::mechanical(PotentialSpec::benchmark())
    }

    #[test]
    fn free_mechanical_jet() {
        let m = HamiltonianModel::<f64>::mechanical(PotentialSpec::zero());
        let j = m.jet(0.3, 2.0, 0.0);
        assert_eq!((j.h, j.h_p, j.h_pp, j.h_x), (2.0, 2.0, 1.0, 0.0));
    }

    #[test]
    fn quadratic_frame_identity() {
        // L(x, v, t) = L(x, β, t) + ½(v - β)² - a(v - β), and W_y = H_x.
        let v = PotentialSpec::<f64>::from_terms_t(&[(1, 1, 0.3, -0.2), (2, 0, 0.1, 0.4)]);
        let models = [
            HamiltonianModel::mechanical(PotentialSpec::benchmark()),
            HamiltonianModel::shifted_kinetic(v, 0.7),
            HamiltonianModel::traveling_wave(PotentialSpec::from_terms(&[(0, -0.5, 0.0), (2, 0.5, 0.0)]), 2),
        ];
        for m in &models {
            let f = m.quadratic_frame().unwrap();
            let (beta, a) = (f.drift, f.tilt);
            assert_eq!(f.mass, 1.0);
            for &(x, w, t) in &[(0.1, 0.3, 0.2), (0.77, -1.2, 0.9), (0.5, 2.0, 0.4)] {
                let d = w - beta;
                let want = m.lagrangian_value(x, beta, t) + 0.5 * d * d - a * d;
                assert!((m.lagrangian_value(x, w, t) - want).abs() < 1e-13);
                let h = 1e-5;
                let wy = -(m.lagrangian_value(x + h, beta, t) - m.lagrangian_value(x - h, beta, t)) / (2.0 * h);
                assert!((wy - m.jet(x, 0.0, t).h_x).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn shifted_kinetic_at_rest() {
        let m = HamiltonianModel::<f64>::shifted_kinetic(PotentialSpec::zero(), 0.7);
        assert!((m.value(0.1, 0.0, 0.3) - 0.245).abs() < 1e-15);
    }

    #[test]
    fn traveling_wave_matches_formula() {
        let v = PotentialSpec::<f64>::from_terms(&[(0, -0.5, 0.0), (2, 0.5, 0.0), (4, 0.1, 0.2)]);
        let m = HamiltonianModel::traveling_wave(v.clone(), 2);
        for &(x, p, t) in &[(0.1, 0.3, 0.2), (0.77, -1.2, 0.9), (0.5, 2.0, 0.4)] {
            let direct = p * p / 2.0 - p / 2.0 + v.value(x + t / 2.0, 0.0);
            assert!((m.value(x, p, t) - direct).abs() < 1e-14);
            assert!((m.jet(x, p, t).h - direct).abs() < 1e-14);
            // L(x,v,t) = L_a(x + t/k, v + 1/k)
            let la = |y: f64, w: f64| w * w / 2.0 - v.value(y, 0.0);
            assert!((m.lagrangian(x, p, t).0 - la(x + t / 2.0, p + 0.5)).abs() < 1e-14);
        }
    }

    #[test]
    fn benchmark_potential_closed_form() {
        let v = PotentialSpec::<f64>::benchmark();
        for i in 0..50 {
            let x = i as f64 / 50.0 + 0.003;
            let s = (2.0 * PI * x).sin();
            let exact = -s * s * (1.0 + 0.5 * (2.0 * PI * x).cos());
            assert!((v.value(x, 0.0) - exact).abs() < 1e-14);
        }
        let j0 = v.jet(0.0, 0.0);
        let jh = v.jet(0.5, 0.0);
        assert!(j0.v.abs() < 1e-15 && jh.v.abs() < 1e-15);
        assert!((j0.v_xx + 12.0 * PI * PI).abs() < 1e-10);
        assert!((jh.v_xx + 4.0 * PI * PI).abs() < 1e-10);
    }

    #[test]
    fn growth_condition_free_particle() {
        let m = HamiltonianModel::<f64>::mechanical(PotentialSpec::zero());
        for k in [0.5, 2.0, 8.0] {
            let m = HamiltonianModel { growth_constant: k, ..m.clone() };
            let r = verify_hypotheses(&m, SampleDensity { nx: 8, np: 8, nt: 2 }).unwrap();
            assert!(r.all_pass());
            assert!((r.min_growth - k * k * k / 2.0).abs() < 1e-9);
        }
    }

    #[test]
    fn growth_condition_benchmark_dense() {
        // Dense lattice oracle for the benchmark at K = 8.
        let r = verify_hypotheses(&bench(), SampleDensity { nx: 512, np: 64, nt: 64 }).unwrap();
        assert!(r.all_pass(), "{r:?}");
    }

    #[test]
    fn shifted_kinetic_growth_reduction() {
        // With q = p + P the growth expression is (q p - q²/2 + P²/2 + inf V - V) K - |V_x|,
        // i.e. (p²/2 - V + inf V) K - |V_x|.
        let v = PotentialSpec::<f64>::benchmark();
        let m = HamiltonianModel::shifted_kinetic(v.clone(), 0.4);
        let k = m.growth_constant;
        let inf_v = (0..2000).map(|i| v.value(i as f64 / 2000.0, 0.0)).fold(f64::INFINITY, f64::min);
        let inf_h0 = 0.08 + inf_v;
        for &(x, p) in &[(0.1, 9.0), (0.6, -12.0), (0.33, 20.0)] {
            let j = m.jet(x, p, 0.0);
            let lhs = (j.h_p * p - j.h + inf_h0) * k - j.h_x.abs();
            let reduced = (p * p / 2.0 - v.value(x, 0.0) + inf_v) * k - v.jet(x, 0.0).v_x.abs();
            assert!((lhs - reduced).abs() < 1e-9);
        }
    }

    #[test]
    fn rejects_bad_wind() {
        let v = PotentialSpec::<f64>::from_terms(&[(1, 1.0, 0.0)]);
        assert!(matches!(HamiltonianModel::traveling_wave(v, 2).validate(), Err(Error::Config(_))));
    }

    #[test]
    fn json_round_trip_and_unknown_family() {
        let json = r#"{"family":"ShiftedKinetic","potential":{"terms":[[1,0.5,0.0],[2,1,0.25,0.1]]},"momentum_shift":0.7}"#;
        let m: HamiltonianModel<f64> = serde_json::from_str(json).unwrap();
        assert_eq!(m.potential.terms[1].freq_t, 1);
        assert_eq!(m.momentum_shift, 0.7);
        let back = serde_json::to_string(&m).unwrap();
        let again: HamiltonianModel<f64> = serde_json::from_str(&back).unwrap();
        assert_eq!(m, again);
        let bad = r#"{"family":"Relativistic"}"#;
        assert!(serde_json::from_str::<HamiltonianModel<f64>>(bad).is_err());
    }

    #[test]
    fn f32_model_evaluates() {
        let m = HamiltonianModel::<f32>::mechanical(PotentialSpec::benchmark());
        assert!(m.value(0.5, 0.0, 0.0).abs() < 1e-6);
    }
}
