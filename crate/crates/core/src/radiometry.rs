//! Black-body spectra, the color-temperature lookup table and the phase
//! function.

use std::f64::consts::PI;
use std::fmt::Write as _;

use crate::cie::{CIE_1931_2DEG, CMF_START_NM, CMF_STEP_NM};
use crate::error::{Error, Result};

/// CODATA 2018 exact values.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhysicalConstants {
    /// Planck constant (J s).
    pub h: f64,
    /// Speed of light (m/s).
    pub c: f64,
    /// Boltzmann constant (J/K).
    pub k_b: f64,
}

pub const CONSTANTS: PhysicalConstants = PhysicalConstants {
    h: 6.626_070_15e-34,
    c: 299_792_458.0,
    k_b: 1.380_649e-23,
};

pub const DEFAULT_T_MIN: f64 = 1000.0;
pub const DEFAULT_T_MAX: f64 = 2300.0;
pub const DEFAULT_T_STEP: f64 = 1.0;

/// Linear sRGB (D65) from CIE XYZ.
const XYZ_TO_SRGB: [[f64; 3]; 3] = [
    [3.240_454_2, -1.537_138_5, -0.498_531_4],
    [-0.969_266_0, 1.876_010_8, 0.041_556_0],
    [0.055_643_4, -0.204_025_9, 1.057_225_2],
];

/// Spectral radiance of a black body, W sr^-1 m^-3.
pub fn planck_radiance(lambda: f64, t: f64) -> Result<f64> {
    if !(lambda > 0.0) || !(t > 0.0) {
        return Err(Error::Domain(format!(
            "planck_radiance needs positive wavelength and temperature (got {lambda}, {t})"
        )));
    }
    let PhysicalConstants { h, c, k_b } = CONSTANTS;
    let x = h * c / (lambda * k_b * t);
    // exp_m1 keeps precision at long wavelengths; overflow to inf gives 0
    Ok(2.0 * h * c * c / lambda.powi(5) / x.exp_m1())
}

/// Unnormalized linear sRGB of a black body, negatives clipped.
fn blackbody_linear_rgb(t: f64) -> [f64; 3] {
    let dl = CMF_STEP_NM * 1e-9;
    let mut xyz = [0.0f64; 3];
    let n = CIE_1931_2DEG.len();
    for (i, cmf) in CIE_1931_2DEG.iter().enumerate() {
        let lambda = (CMF_START_NM + CMF_STEP_NM * i as f64) * 1e-9;
        let l = planck_radiance(lambda, t).expect("positive inputs");
        // trapezoid rule: half weight at both ends
        let w = if i == 0 || i == n - 1 { 0.5 * dl } else { dl };
        for d in 0..3 {
            xyz[d] += w * l * cmf[d];
        }
    }
    let mut rgb = [0.0; 3];
    for (r, row) in rgb.iter_mut().zip(XYZ_TO_SRGB.iter()) {
        *r = (row[0] * xyz[0] + row[1] * xyz[1] + row[2] * xyz[2]).max(0.0);
    }
    rgb
}

/// Tabulated temperature to RGB mapping, exposure-normalized so the largest
/// channel value in the table is 255.
#[derive(Debug, Clone, PartialEq)]
pub struct ColorTempMap {
    pub t_min: f64,
    pub t_max: f64,
    pub step: f64,
    temps: Vec<f64>,
    pub entries: Vec<[f64; 3]>,
}

/// Inverse lookup result.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GreenLookup {
    pub kelvin: f64,
    /// The green value was outside the table and got clamped to an endpoint.
    pub clamped: bool,
}

impl ColorTempMap {
    pub fn build(t_min: f64, t_max: f64, step: f64) -> Result<Self> {
        if !(t_min > 0.0 && t_max > t_min) {
            return Err(Error::Domain(format!("need 0 < t_min < t_max (got {t_min}, {t_max})")));
        }
        if !(step > 0.0) {
            return Err(Error::Domain(format!("step {step} must be positive")));
        }
        let rows = ((t_max - t_min) / step + 1e-9).floor() as usize + 1;
        let mut temps: Vec<f64> = (0..rows).map(|i| t_min + step * i as f64).collect();
        if t_max - temps[rows - 1] > 1e-9 * t_max {
            temps.push(t_max);
        }
        let raw: Vec<[f64; 3]> = temps.iter().map(|&t| blackbody_linear_rgb(t)).collect();
        let peak = raw.iter().flat_map(|e| e.iter().copied()).fold(0.0f64, f64::max);
        if !(peak > 0.0 && peak.is_finite()) {
            return Err(Error::ColorMap("black-body colors vanish over the range".into()));
        }
        let scale = 255.0 / peak;
        let entries: Vec<[f64; 3]> = raw.iter().map(|e| e.map(|v| v * scale)).collect();
        for w in entries.windows(2).enumerate() {
            let (i, pair) = w;
            if !(pair[1][1] > pair[0][1]) {
                return Err(Error::ColorMap(format!(
                    "green channel not strictly increasing at {} K",
                    temps[i + 1]
                )));
            }
        }
        Ok(ColorTempMap {
            t_min,
            t_max,
            step,
            temps,
            entries,
        })
    }

    pub fn default_range() -> Self {
        ColorTempMap::build(DEFAULT_T_MIN, DEFAULT_T_MAX, DEFAULT_T_STEP).expect("default range is valid")
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn temperatures(&self) -> &[f64] {
        &self.temps
    }

    pub fn green_min(&self) -> f64 {
        self.entries[0][1]
    }

    pub fn green_max(&self) -> f64 {
        self.entries[self.entries.len() - 1][1]
    }

    /// RGB at temperature `t`, clamped to the table range and linearly
    /// interpolated between rows.
    pub fn rgb_of(&self, t: f64) -> [f64; 3] {
        let t = t.clamp(self.t_min, self.t_max);
        let i = self.temps.partition_point(|&x| x <= t).clamp(1, self.temps.len() - 1);
        let (t0, t1) = (self.temps[i - 1], self.temps[i]);
        let w = (t - t0) / (t1 - t0);
        let (a, b) = (self.entries[i - 1], self.entries[i]);
        [0, 1, 2].map(|d| a[d] + (b[d] - a[d]) * w)
    }

    pub fn green_of(&self, t: f64) -> f64 {
        self.rgb_of(t)[1]
    }

    /// Inverse of the green channel by linear interpolation between rows.
    pub fn temp_from_green(&self, g: f64) -> GreenLookup {
        let n = self.entries.len();
        if g.is_nan() || g <= self.green_min() {
            return GreenLookup {
                kelvin: self.t_min,
                clamped: g.is_nan() || g < self.green_min(),
            };
        }
        if g >= self.green_max() {
            return GreenLookup {
                kelvin: self.t_max,
                clamped: g > self.green_max(),
            };
        }
        let i = self.entries.partition_point(|e| e[1] <= g).clamp(1, n - 1);
        let (g0, g1) = (self.entries[i - 1][1], self.entries[i][1]);
        let w = (g - g0) / (g1 - g0);
        GreenLookup {
            kelvin: self.temps[i - 1] + (self.temps[i] - self.temps[i - 1]) * w,
            clamped: false,
        }
    }

    /// `temperature_K,red,green,blue`, one row per table entry.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("temperature_K,red,green,blue\n");
        for (t, e) in self.temps.iter().zip(&self.entries) {
            writeln!(out, "{t},{},{},{}", e[0], e[1], e[2]).unwrap();
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhaseConfig {
    pub g: f64,
}

impl PhaseConfig {
    pub fn new(g: f64) -> Result<Self> {
        if !(g > -1.0 && g < 1.0) {
            return Err(Error::Domain(format!("anisotropy g = {g} outside (-1, 1)")));
        }
        Ok(PhaseConfig { g })
    }

    pub fn isotropic() -> Self {
        PhaseConfig { g: 0.0 }
    }
}

impl Default for PhaseConfig {
    fn default() -> Self {
        PhaseConfig::isotropic()
    }
}

/// Henyey-Greenstein phase function with the `+2 g mu` denominator sign,
/// where `mu` is the cosine between the view and incident directions.
pub fn phase_hg(cfg: PhaseConfig, mu: f64) -> Result<f64> {
    if !(-1.0..=1.0).contains(&mu) {
        return Err(Error::Domain(format!("cosine {mu} outside [-1, 1]")));
    }
    Ok(phase_hg_unchecked(cfg.g, mu))
}

#[inline]
pub(crate) fn phase_hg_unchecked(g: f64, mu: f64) -> f64 {
    let g2 = g * g;
    (1.0 - g2) / (4.0 * PI * (1.0 + g2 + 2.0 * g * mu).powf(1.5))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn radiance_increases_with_temperature() {
        for &lambda in &[400e-9, 550e-9, 700e-9] {
            let mut prev = 0.0;
            for t in (500..5000).step_by(50) {
                let l = planck_radiance(lambda, t as f64).unwrap();
                assert!(l > prev);
                prev = l;
            }
        }
    }

    #[test]
    fn cold_body_underflows() {
        let l = planck_radiance(550e-9, 50.0).unwrap();
        assert!((0.0..1e-200).contains(&l));
    }

    #[test]
    fn nonpositive_inputs_rejected() {
        assert!(planck_radiance(0.0, 1000.0).is_err());
        assert!(planck_radiance(500e-9, -1.0).is_err());
    }

    #[test]
    fn wien_peak_at_2000k() {
        // grid scan over 100 nm .. 10 um
        let t = 2000.0;
        let (mut best, mut best_l) = (0.0, 0.0);
        let mut lambda: f64 = 100e-9;
        while lambda <= 10e-6 {
            let l = planck_radiance(lambda, t).unwrap();
            if l > best_l {
                best_l = l;
                best = lambda;
            }
            lambda += 0.1e-9;
        }
        let wien = 2.898e-3 / t;
        assert!((best - wien).abs() / wien < 1e-3, "scan {best} vs wien {wien}");
        assert!((best - 1.449e-6).abs() / 1.449e-6 < 0.01);
    }

    #[test]
    fn default_map_properties() {
        let map = ColorTempMap::default_range();
        assert_eq!(map.len(), 1301);
        let peak = map.entries.iter().flat_map(|e| e.iter().copied()).fold(0.0, f64::max);
        assert!((peak - 255.0).abs() < 1e-9, "{peak}");
        assert!(map.entries.windows(2).all(|w| w[1][1] > w[0][1]));
        let cold = map.rgb_of(1000.0);
        assert!(cold[0] > 50.0 * cold[2].max(1e-30));
        assert!(cold[0] > cold[1]);
        assert!(map.entries.iter().all(|e| e.iter().all(|v| v.is_finite() && *v >= 0.0)));
    }

    #[test]
    fn inverse_endpoints_and_clamping() {
        let map = ColorTempMap::default_range();
        assert_eq!(map.temp_from_green(map.green_min()).kelvin, 1000.0);
        assert_eq!(map.temp_from_green(map.green_max()).kelvin, 2300.0);
        let lo = map.temp_from_green(-5.0);
        assert!(lo.clamped && lo.kelvin == 1000.0);
        let hi = map.temp_from_green(1e9);
        assert!(hi.clamped && hi.kelvin == 2300.0);
    }

    #[test]
    fn inverse_round_trip_within_one_step() {
        use rand::{Rng, SeedableRng};
        let map = ColorTempMap::default_range();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(13);
        for _ in 0..50 {
            let t: f64 = rng.random_range(1000.0..2300.0);
            let back = map.temp_from_green(map.green_of(t));
            assert!(!back.clamped);
            assert!((back.kelvin - t).abs() <= map.step, "{t} -> {}", back.kelvin);
        }
    }

    #[test]
    fn non_monotonic_range_is_rejected() {
        // very cold bodies sit outside the sRGB gamut; green clips to zero
        match ColorTempMap::build(200.0, 300.0, 1.0) {
            Err(Error::ColorMap(_)) => {}
            other => panic!("expected color map error, got {:?}", other.map(|m| m.len())),
        }
        assert!(ColorTempMap::build(2000.0, 1000.0, 1.0).is_err());
        assert!(ColorTempMap::build(1000.0, 2000.0, 0.0).is_err());
    }

    #[test]
    fn csv_export_shape() {
        let map = ColorTempMap::build(1000.0, 1010.0, 5.0).unwrap();
        let csv = map.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "temperature_K,red,green,blue");
        assert_eq!(lines.len(), 4);
        assert!(lines[3].starts_with("1010,"));
    }

    #[test]
    fn isotropic_phase() {
        for mu in [-1.0, -0.3, 0.0, 0.7, 1.0] {
            let p = phase_hg(PhaseConfig::isotropic(), mu).unwrap();
            assert!((p - 1.0 / (4.0 * PI)).abs() < 1e-15);
        }
        assert!((1.0 / (4.0 * PI) - 0.07958).abs() < 1e-5);
    }

    #[test]
    fn phase_value_at_right_angle() {
        let p = phase_hg(PhaseConfig::new(0.5).unwrap(), 0.0).unwrap();
        // (1/4pi) * 0.75 / 1.25^1.5
        assert!((p - 0.0427).abs() < 5e-5, "{p}");
    }

    #[test]
    fn phase_rejects_bad_inputs() {
        assert!(phase_hg(PhaseConfig::isotropic(), 1.01).is_err());
        assert!(PhaseConfig::new(1.0).is_err());
        assert!(PhaseConfig::new(-1.0).is_err());
    }
}
