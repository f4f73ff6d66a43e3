//! Synthetic scenes: procedural volumes, camera rings and the scene file.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{load_cameras, Camera, Pt3, Vec3};
use crate::radiometry::{ColorTempMap, PhaseConfig, DEFAULT_T_MAX, DEFAULT_T_MIN, DEFAULT_T_STEP};
use crate::reconstruct::ReconstructionConfig;
use crate::render::RenderConfig;
use crate::volume::{determine_dimensions, Aabb, Channel, GridGeometry, VoxelGrid, DEFAULT_ALPHA};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SynthKind {
    Flame,
    Smoke,
    Slab,
}

impl std::str::FromStr for SynthKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "flame" => Ok(SynthKind::Flame),
            "smoke" => Ok(SynthKind::Smoke),
            "slab" => Ok(SynthKind::Slab),
            other => Err(Error::Usage(format!("unknown volume kind '{other}'"))),
        }
    }
}

/// Emission value of every key point of a slab volume.
pub const SLAB_VALUE: f32 = 100.0;

#[derive(Debug, Clone)]
pub struct SynthVolume {
    /// Emission grids: red, green and blue.
    pub grids: Vec<VoxelGrid>,
    /// Kelvin at every key point for flames (the map minimum where there is
    /// no flame).
    pub temperature: Option<VoxelGrid>,
}

/// Smooth seeded noise in roughly [-1, 1] from a coarse random lattice.
struct ValueNoise {
    n: usize,
    values: Vec<f64>,
}

impl ValueNoise {
    fn new(rng: &mut ChaCha8Rng, n: usize) -> Self {
        ValueNoise {
            n,
            values: (0..n * n * n).map(|_| rng.random_range(-1.0..1.0)).collect(),
        }
    }

    /// `q` in [0, 1]^3.
    fn at(&self, q: [f64; 3]) -> f64 {
        let m = (self.n - 1) as f64;
        let mut cell = [0usize; 3];
        let mut w = [0.0f64; 3];
        for d in 0..3 {
            let f = (q[d].clamp(0.0, 1.0) * m).min(m - 1e-9);
            cell[d] = f.floor() as usize;
            let t = f - cell[d] as f64;
            w[d] = t * t * (3.0 - 2.0 * t);
        }
        let idx = |i: usize, j: usize, k: usize| (k * self.n + j) * self.n + i;
        let mut acc = 0.0;
        for c in 0..8 {
            let (di, dj, dk) = (c & 1, (c >> 1) & 1, (c >> 2) & 1);
            let weight = (if di == 1 { w[0] } else { 1.0 - w[0] })
                * (if dj == 1 { w[1] } else { 1.0 - w[1] })
                * (if dk == 1 { w[2] } else { 1.0 - w[2] });
            acc += weight * self.values[idx(cell[0] + di, cell[1] + dj, cell[2] + dk)];
        }
        acc
    }
}

/// Rising plume: returns the relative intensity in [0, 1] at a point given
/// in box-normalized coordinates (each axis in [-1, 1], z up).
struct Plume {
    sway_x: ValueNoise,
    sway_y: ValueNoise,
    wobble: ValueNoise,
    grain: ValueNoise,
}

impl Plume {
    const BASE: f64 = -0.7;
    const TIP: f64 = 0.7;
    const RADIUS: f64 = 0.66;
    /// Inner share of the radius at full intensity.
    const PLATEAU: f64 = 0.75;

    fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Plume {
            sway_x: ValueNoise::new(&mut rng, 4),
            sway_y: ValueNoise::new(&mut rng, 4),
            wobble: ValueNoise::new(&mut rng, 6),
            grain: ValueNoise::new(&mut rng, 9),
        }
    }

    fn intensity(&self, q: [f64; 3]) -> f64 {
        let s = (q[2] - Self::BASE) / (Self::TIP - Self::BASE);
        if !(0.0..=1.0).contains(&s) {
            return 0.0;
        }
        let u = [(q[0] + 1.0) / 2.0, (q[1] + 1.0) / 2.0, s];
        let cx = 0.08 * s * self.sway_x.at([0.5, 0.5, s]);
        let cy = 0.08 * s * self.sway_y.at([0.5, 0.5, s]);
        let radius =
            Self::RADIUS * (s / 0.12).min(1.0).sqrt() * (1.0 - s).powf(0.45) * (1.0 + 0.12 * self.wobble.at(u));
        if radius <= 0.0 {
            return 0.0;
        }
        let rho = ((q[0] - cx).powi(2) + (q[1] - cy).powi(2)).sqrt() / radius;
        if rho >= 1.0 {
            return 0.0;
        }
        let t = ((1.0 - rho) / (1.0 - Self::PLATEAU)).min(1.0);
        let edge = t * t * (3.0 - 2.0 * t);
        let core = (0.55 + 0.45 * edge) * (1.0 - 0.06 * s) * (1.0 + 0.03 * self.grain.at(u));
        core.clamp(0.0, 1.0)
    }
}

fn normalized(geom: &GridGeometry, p: &Pt3) -> [f64; 3] {
    let b = geom.bounds();
    let c = b.center();
    let half = b.lengths().max() / 2.0;
    [(p.x - c.x) / half, (p.y - c.y) / half, (p.z - c.z) / half]
}

/// Procedural volume over `geom`. The same seed always yields the same
/// values.
pub fn synth_volume(geom: &GridGeometry, seed: u64, kind: SynthKind, map: &ColorTempMap) -> Result<SynthVolume> {
    if geom.nx < 8 || geom.ny < 8 || geom.nz < 8 {
        return Err(Error::Domain(
            "synthetic volumes need at least 8 voxels per axis".into(),
        ));
    }
    match kind {
        SynthKind::Slab => Ok(SynthVolume {
            grids: Channel::RGB
                .iter()
                .map(|&c| VoxelGrid::filled(*geom, c, SLAB_VALUE))
                .collect(),
            temperature: None,
        }),
        SynthKind::Flame => {
            let plume = Plume::new(seed);
            let (t_lo, t_hi) = (map.t_min, map.t_max);
            let temperature = VoxelGrid::from_fn(*geom, Channel::Temperature, |p| {
                let f = plume.intensity(normalized(geom, &p)).sqrt();
                (t_lo + (t_hi - t_lo) * f) as f32
            });
            let grids = Channel::RGB
                .iter()
                .map(|&ch| {
                    let c = ch.rgb_index().expect("rgb") as usize;
                    let values = temperature
                        .values
                        .iter()
                        .map(|&t| {
                            if t as f64 > t_lo {
                                map.rgb_of(t as f64)[c] as f32
                            } else {
                                0.0
                            }
                        })
                        .collect();
                    VoxelGrid {
                        geom: *geom,
                        values,
                        channel: ch,
                    }
                })
                .collect();
            Ok(SynthVolume {
                grids,
                temperature: Some(temperature),
            })
        }
        SynthKind::Smoke => {
            let plume = Plume::new(seed);
            let density = VoxelGrid::from_fn(*geom, Channel::Red, |p| {
                let q = normalized(geom, &p);
                // smoke spreads wider and rises higher than the flame
                (160.0 * plume.intensity([q[0] / 1.4, q[1] / 1.4, q[2] * 0.95]).sqrt()) as f32
            });
            let grids = Channel::RGB
                .iter()
                .map(|&c| VoxelGrid {
                    channel: c,
                    ..density.clone()
                })
                .collect();
            Ok(SynthVolume {
                grids,
                temperature: None,
            })
        }
    }
}

/// Cameras on a horizontal circle around `center`, evenly spaced in
/// azimuth and raised or lowered by a seeded angle within `±jitter_deg`.
#[allow(clippy::too_many_arguments)]
pub fn synth_cameras(
    count: usize,
    center: Pt3,
    radius: f64,
    fov_deg: f64,
    jitter_deg: f64,
    seed: u64,
    width: u32,
    height: u32,
) -> Result<Vec<Camera>> {
    if count == 0 {
        return Err(Error::Domain("need at least one camera".into()));
    }
    if !(radius > 0.0) || !(0.0..90.0).contains(&jitter_deg) {
        return Err(Error::Domain(
            "radius must be positive and jitter within [0, 90)".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|i| {
            let az = (i as f64 * 360.0 / count as f64).to_radians();
            let el = if jitter_deg > 0.0 {
                rng.random_range(-jitter_deg..=jitter_deg).to_radians()
            } else {
                0.0
            };
            let eye = center + Vec3::new(el.cos() * az.cos(), el.cos() * az.sin(), el.sin()) * radius;
            Camera::look_at(eye, center, Vec3::z(), fov_deg, width, height)
        })
        .collect()
}

// ----- scene file ---------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VolumeSection {
    /// Minimal box corner (m).
    pub origin: [f64; 3],
    /// Box side lengths (m).
    pub lengths: [f64; 3],
    /// Voxels along the longest side; derived from the cameras when absent.
    pub grid: Option<usize>,
    pub alpha: f64,
    pub kind: SynthKind,
}

impl Default for VolumeSection {
    fn default() -> Self {
        VolumeSection {
            origin: [-0.1, -0.1, -0.1],
            lengths: [0.2, 0.2, 0.2],
            grid: Some(64),
            alpha: DEFAULT_ALPHA,
            kind: SynthKind::Flame,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CameraSection {
    /// Camera parameter file; when set the ring fields are ignored.
    pub file: Option<PathBuf>,
    pub count: usize,
    pub radius: f64,
    pub fov_deg: f64,
    pub jitter_deg: f64,
    pub width: u32,
    pub height: u32,
}

impl Default for CameraSection {
    fn default() -> Self {
        CameraSection {
            file: None,
            count: 10,
            radius: 0.3,
            fov_deg: 60.0,
            jitter_deg: 5.0,
            width: 320,
            height: 240,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RenderSection {
    pub tau: f64,
    pub sigma_a: f64,
    pub sigma_s: f64,
    pub scattering: bool,
    pub scatter_dirs: usize,
    pub scatter_distance: Option<f64>,
    pub background: [f32; 3],
    pub phase_g: f64,
}

impl Default for RenderSection {
    fn default() -> Self {
        let r = RenderConfig::default();
        RenderSection {
            tau: r.tau,
            sigma_a: r.sigma_a,
            sigma_s: r.sigma_s,
            scattering: r.scattering_enabled,
            scatter_dirs: r.scatter_dirs,
            scatter_distance: r.scatter_distance,
            background: r.background,
            phase_g: r.phase.g,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReconstructSection {
    pub alpha_l: f64,
    pub alpha_d: f64,
    pub reference_edge: f64,
    pub max_iters: usize,
    pub converge_eps: f64,
    pub g_sigma: f64,
    pub deterministic: bool,
}

impl Default for ReconstructSection {
    fn default() -> Self {
        let r = ReconstructionConfig::default();
        ReconstructSection {
            alpha_l: r.alpha_l,
            alpha_d: r.alpha_d,
            reference_edge: r.reference_edge,
            max_iters: r.max_iters,
            converge_eps: r.converge_eps,
            g_sigma: r.g_sigma,
            deterministic: r.deterministic,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessSection {
    pub threshold: f32,
    pub dilate: u32,
}

impl Default for PreprocessSection {
    fn default() -> Self {
        PreprocessSection {
            threshold: crate::preprocess::DEFAULT_THRESHOLD,
            dilate: crate::preprocess::DEFAULT_DILATE,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TemperatureSection {
    pub t_min: f64,
    pub t_max: f64,
    pub step: f64,
}

impl Default for TemperatureSection {
    fn default() -> Self {
        TemperatureSection {
            t_min: DEFAULT_T_MIN,
            t_max: DEFAULT_T_MAX,
            step: DEFAULT_T_STEP,
        }
    }
}

/// Everything needed to set up a synthetic or file-based experiment.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneConfig {
    pub seed: u64,
    pub volume: VolumeSection,
    pub cameras: CameraSection,
    pub render: RenderSection,
    pub reconstruct: ReconstructSection,
    pub preprocess: PreprocessSection,
    pub temperature: TemperatureSection,
}

impl SceneConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: SceneConfig = toml::from_str(text).map_err(|e| Error::format("scene file", e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a scene file; a relative camera path resolves against the
    /// scene file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = SceneConfig::parse(&text)?;
        if let (Some(file), Some(dir)) = (cfg.cameras.file.as_mut(), path.parent()) {
            if file.is_relative() {
                *file = dir.join(&*file);
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scene config always serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.volume.lengths.iter().any(|l| !(*l > 0.0 && l.is_finite())) {
            return Err(Error::Domain("volume lengths must be positive".into()));
        }
        if self.volume.grid == Some(0) {
            return Err(Error::Domain("grid must have at least one voxel".into()));
        }
        if !(self.volume.alpha > 0.0) {
            return Err(Error::Domain("alpha must be positive".into()));
        }
        if self.cameras.file.is_none()
            && (self.cameras.count == 0 || self.cameras.width == 0 || self.cameras.height == 0)
        {
            return Err(Error::Domain("camera ring needs a count and a resolution".into()));
        }
        self.render_config().validate()?;
        self.reconstruction_config().validate()?;
        Ok(())
    }

    pub fn bbox(&self) -> Result<Aabb> {
        let o = Pt3::from(self.volume.origin);
        Aabb::new(o, o + Vec3::from(self.volume.lengths))
    }

    pub fn render_config(&self) -> RenderConfig {
        let r = &self.render;
        RenderConfig {
            tau: r.tau,
            sigma_a: r.sigma_a,
            sigma_s: r.sigma_s,
            scattering_enabled: r.scattering,
            scatter_dirs: r.scatter_dirs,
            scatter_distance: r.scatter_distance,
            background: r.background,
            phase: PhaseConfig { g: r.phase_g },
        }
    }

    pub fn reconstruction_config(&self) -> ReconstructionConfig {
        let r = &self.reconstruct;
        ReconstructionConfig {
            alpha_l: r.alpha_l,
            alpha_d: r.alpha_d,
            reference_edge: r.reference_edge,
            max_iters: r.max_iters,
            converge_eps: r.converge_eps,
            rng_seed: self.seed,
            g_sigma: r.g_sigma,
            deterministic: r.deterministic,
            render: self.render_config(),
        }
    }

    pub fn color_map(&self) -> Result<ColorTempMap> {
        let t = &self.temperature;
        ColorTempMap::build(t.t_min, t.t_max, t.step)
    }

    pub fn cameras(&self) -> Result<Vec<Camera>> {
        let c = &self.cameras;
        match &c.file {
            Some(file) => load_cameras(file),
            None => synth_cameras(
                c.count,
                self.bbox()?.center(),
                c.radius,
                c.fov_deg,
                c.jitter_deg,
                self.seed,
                c.width,
                c.height,
            ),
        }
    }

    /// Lattice over the volume box: a fixed voxel count along the longest
    /// side when `grid` is set, otherwise sized from the cameras.
    pub fn geometry(&self, cameras: &[Camera]) -> Result<GridGeometry> {
        let bbox = self.bbox()?;
        let lengths = bbox.lengths();
        match self.volume.grid {
            Some(n) => {
                let edge = lengths.max() / n as f64;
                let count = |l: f64| ((l / edge).round() as usize).max(1);
                GridGeometry::new(count(lengths.x), count(lengths.y), count(lengths.z), bbox.min, edge)
            }
            None => determine_dimensions(cameras, &bbox, self.volume.alpha)?.geometry(bbox.min),
        }
    }
}
