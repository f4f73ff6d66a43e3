//! Ray-marched image formation over key-point grids.
//!
//! Every ray is sampled at voxel-edge spacing from where it enters the grid
//! box. Each sample contributes `tau * L_src` weighted by the transparency
//! accumulated in front of it, and the background shows through whatever
//! transparency is left at the far side.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{Camera, Pt3, Ray, Vec3};
use crate::image::{Image, Rect};
use crate::radiometry::{phase_hg_unchecked, PhaseConfig};
use crate::volume::{GridGeometry, HullTags, VoxelGrid};

/// Sub-samples taken along each in-scatter gather direction.
const GATHER_STEPS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RenderConfig {
    /// Opacity of a single sample.
    pub tau: f64,
    pub sigma_a: f64,
    pub sigma_s: f64,
    pub scattering_enabled: bool,
    pub scatter_dirs: usize,
    /// Gather length for in-scattering in meters; `None` means one voxel edge.
    pub scatter_distance: Option<f64>,
    pub background: [f32; 3],
    pub phase: PhaseConfig,
}

impl Default for RenderConfig {
    fn default() -> Self {
        RenderConfig {
            tau: 0.05,
            sigma_a: 1.0,
            sigma_s: 0.0,
            scattering_enabled: false,
            scatter_dirs: 32,
            scatter_distance: None,
            background: [0.0; 3],
            phase: PhaseConfig::isotropic(),
        }
    }
}

impl RenderConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return Err(Error::Domain(format!("tau {} must lie in (0, 1)", self.tau)));
        }
        if !(self.sigma_a >= 0.0 && self.sigma_s >= 0.0) || !self.sigma_a.is_finite() || !self.sigma_s.is_finite() {
            return Err(Error::Domain(
                "sigma_a and sigma_s must be finite and nonnegative".into(),
            ));
        }
        if self.scattering_enabled && self.scatter_dirs == 0 {
            return Err(Error::Domain("scattering needs at least one direction".into()));
        }
        if let Some(d) = self.scatter_distance {
            if !(d > 0.0 && d.is_finite()) {
                return Err(Error::Domain(format!("scatter distance {d} must be positive")));
            }
        }
        if self.background.iter().any(|b| !(b.is_finite() && *b >= 0.0)) {
            return Err(Error::Domain("background must be finite and nonnegative".into()));
        }
        if !(self.phase.g > -1.0 && self.phase.g < 1.0) {
            return Err(Error::Domain(format!(
                "phase asymmetry {} must lie in (-1, 1)",
                self.phase.g
            )));
        }
        Ok(())
    }

    fn scatters(&self) -> bool {
        self.scattering_enabled && self.sigma_s > 0.0
    }
}

/// One sample along a marched ray.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplePoint {
    pub position: Pt3,
    /// 1 for the sample nearest the entry point.
    pub order_k: usize,
    /// Distance from the ray origin.
    pub t: f64,
    pub(crate) cell: [usize; 3],
    pub(crate) frac: [f64; 3],
}

impl SamplePoint {
    /// Index of the voxel holding the sample.
    pub fn voxel(&self, geom: &GridGeometry) -> usize {
        geom.voxel_index(self.cell[0], self.cell[1], self.cell[2])
    }
}

/// Front-to-back sample iterator over a grid box.
#[derive(Debug, Clone)]
pub(crate) struct Marcher {
    ray: Ray,
    geom: GridGeometry,
    t0: f64,
    count: usize,
    next: usize,
}

impl Marcher {
    pub(crate) fn new(ray: &Ray, geom: &GridGeometry) -> Self {
        let (t0, count) = match geom.bounds().intersect(&ray.origin, &ray.direction) {
            Some((t0, t1)) => {
                let n = ((t1 - t0) / geom.edge + 1e-9).floor();
                (t0, if n > 0.0 { n as usize } else { 0 })
            }
            None => (0.0, 0),
        };
        Marcher {
            ray: *ray,
            geom: *geom,
            t0,
            count,
            next: 0,
        }
    }
}

impl Iterator for Marcher {
    type Item = SamplePoint;

    #[inline]
    fn next(&mut self) -> Option<SamplePoint> {
        if self.next >= self.count {
            return None;
        }
        self.next += 1;
        let t = self.t0 + (self.next as f64 - 0.5) * self.geom.edge;
        let position = self.ray.at(t);
        let (cell, frac) = self.geom.locate(&position);
        Some(SamplePoint {
            position,
            order_k: self.next,
            t,
            cell,
            frac,
        })
    }
}

/// All samples of `ray` inside the grid box, front to back.
pub fn march(ray: &Ray, grid: &VoxelGrid) -> Vec<SamplePoint> {
    Marcher::new(ray, &grid.geom).collect()
}

/// Transparency in front of the `k`-th sample, `(1 - tau)^(k-1)`.
pub fn sample_transparency(k: usize, tau: f64) -> Result<f64> {
    if k < 1 {
        return Err(Error::Domain("sample order starts at 1".into()));
    }
    Ok(transparency_unchecked(k, tau))
}

#[inline]
pub(crate) fn transparency_unchecked(k: usize, tau: f64) -> f64 {
    // Same product order as the compositing loop, so both agree bit for bit.
    let mut t = 1.0f64;
    for _ in 1..k {
        t *= 1.0 - tau;
    }
    t
}

/// Unit directions spread evenly over the sphere (spherical Fibonacci set).
pub fn fibonacci_sphere(n: usize) -> Vec<Vec3> {
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    (0..n)
        .map(|i| {
            let z = 1.0 - (2.0 * i as f64 + 1.0) / n as f64;
            let r = (1.0 - z * z).max(0.0).sqrt();
            let phi = golden * i as f64;
            Vec3::new(r * phi.cos(), r * phi.sin(), z)
        })
        .collect()
}

/// Precomputed gather directions for in-scattering.
#[derive(Debug, Clone)]
pub(crate) struct ScatterKernel {
    dirs: Vec<Vec3>,
    distance: f64,
}

impl ScatterKernel {
    pub(crate) fn new(cfg: &RenderConfig, geom: &GridGeometry) -> Option<Self> {
        cfg.scatters().then(|| ScatterKernel {
            dirs: fibonacci_sphere(cfg.scatter_dirs),
            distance: cfg.scatter_distance.unwrap_or(geom.edge),
        })
    }

    fn gather(&self, grids: &[&VoxelGrid], p: &Pt3, view: &Vec3, cfg: &RenderConfig, out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        let geom = &grids[0].geom;
        let four_pi = 4.0 * std::f64::consts::PI;
        for w in &self.dirs {
            let phase = four_pi * phase_hg_unchecked(cfg.phase.g, view.dot(w));
            for s in 0..GATHER_STEPS {
                let q = p + w * (self.distance * (s as f64 + 0.5) / GATHER_STEPS as f64);
                if !geom.contains(&q) {
                    continue;
                }
                let (cell, frac) = geom.locate(&q);
                for (o, g) in out.iter_mut().zip(grids) {
                    *o += phase * g.sample_cell_clamped(cell, frac);
                }
            }
        }
        let norm = cfg.sigma_s / (self.dirs.len() * GATHER_STEPS) as f64;
        out.iter_mut().for_each(|o| *o *= norm);
    }
}

/// Single-scattering radiance at `p` for a ray travelling along `view_dir`,
/// already weighted by `sigma_s`. Zero when scattering is off.
pub fn in_scatter(grids: &[VoxelGrid], p: &Pt3, view_dir: &Vec3, cfg: &RenderConfig) -> Result<Vec<f64>> {
    let refs = check_grids(grids)?;
    let mut out = vec![0.0; grids.len()];
    if let Some(kernel) = ScatterKernel::new(cfg, &grids[0].geom) {
        if !grids[0].geom.contains(p) {
            return Err(Error::Domain(format!("point {p:?} outside grid box")));
        }
        kernel.gather(&refs, p, &view_dir.normalize(), cfg, &mut out);
    }
    Ok(out)
}

fn check_grids(grids: &[VoxelGrid]) -> Result<Vec<&VoxelGrid>> {
    let first = grids.first().ok_or_else(|| Error::Usage("no grids to render".into()))?;
    if grids.len() > 3 {
        return Err(Error::Usage("at most three channels can be rendered together".into()));
    }
    if grids.iter().any(|g| !g.geom.same_lattice(&first.geom)) {
        return Err(Error::Usage("grids do not share one lattice".into()));
    }
    Ok(grids.iter().collect())
}

/// Background level seen by each grid, by channel tag.
pub(crate) fn backgrounds(grids: &[&VoxelGrid], cfg: &RenderConfig) -> [f64; 3] {
    let mut bg = [0.0; 3];
    for (n, g) in grids.iter().enumerate() {
        let c = g
            .channel
            .rgb_index()
            .unwrap_or(if grids.len() == 1 { 0 } else { n as u32 });
        bg[n] = cfg.background[c as usize] as f64;
    }
    bg
}

/// Composites one ray. `out` receives one value per grid.
pub(crate) fn integrate_into(
    ray: &Ray,
    grids: &[&VoxelGrid],
    hull: Option<&HullTags>,
    cfg: &RenderConfig,
    kernel: Option<&ScatterKernel>,
    bg: &[f64; 3],
    out: &mut [f64],
) {
    let geom = &grids[0].geom;
    let n = grids.len();
    let mut acc = [0.0f64; 3];
    let mut scatter = [0.0f64; 3];
    let mut trans = 1.0f64;
    for s in Marcher::new(ray, geom) {
        let emits = hull.is_none_or(|h| h.hull_contains(s.voxel(geom)));
        if let Some(k) = kernel {
            k.gather(grids, &s.position, &ray.direction, cfg, &mut scatter[..n]);
        }
        for c in 0..n {
            let e = if emits {
                grids[c].sample_cell_clamped(s.cell, s.frac)
            } else {
                0.0
            };
            let src = cfg.sigma_a * e + scatter[c];
            acc[c] += trans * (cfg.tau * src);
        }
        trans *= 1.0 - cfg.tau;
    }
    for c in 0..n {
        out[c] = acc[c] + trans * bg[c];
    }
}

/// Pixel value of one ray through up to three channel grids. Unused
/// channels of the result stay zero. With `hull` given, only samples in
/// hull voxels emit.
pub fn integrate_ray(ray: &Ray, grids: &[VoxelGrid], hull: Option<&HullTags>, cfg: &RenderConfig) -> Result<[f64; 3]> {
    let refs = check_grids(grids)?;
    let kernel = ScatterKernel::new(cfg, &grids[0].geom);
    let bg = backgrounds(&refs, cfg);
    let mut out = [0.0; 3];
    integrate_into(ray, &refs, hull, cfg, kernel.as_ref(), &bg, &mut out[..grids.len()]);
    Ok(out)
}

/// Renders every pixel center of `camera`; the image has one channel per grid.
pub fn render_view(camera: &Camera, grids: &[VoxelGrid], hull: Option<&HullTags>, cfg: &RenderConfig) -> Result<Image> {
    let refs: Vec<&VoxelGrid> = check_grids(grids)?;
    render_view_refs(camera, &refs, hull, cfg, None)
}

/// Like [`render_view`] but only pixels inside `rect` are traced; the rest
/// hold the background.
pub fn render_region(
    camera: &Camera,
    grids: &[VoxelGrid],
    hull: Option<&HullTags>,
    cfg: &RenderConfig,
    rect: Rect,
) -> Result<Image> {
    let refs: Vec<&VoxelGrid> = check_grids(grids)?;
    render_view_refs(camera, &refs, hull, cfg, Some(rect))
}

pub(crate) fn render_view_refs(
    camera: &Camera,
    grids: &[&VoxelGrid],
    hull: Option<&HullTags>,
    cfg: &RenderConfig,
    rect: Option<Rect>,
) -> Result<Image> {
    cfg.validate()?;
    let rect = rect.unwrap_or(Rect::full(camera.width, camera.height));
    if !rect.fits(camera.width, camera.height) {
        return Err(Error::Usage("render region exceeds the image".into()));
    }
    if let Some(h) = hull {
        if !h.geom.same_lattice(&grids[0].geom) {
            return Err(Error::Usage("hull and grid lattices differ".into()));
        }
    }
    let n = grids.len();
    let channels = if n == 1 { 1 } else { 3 };
    let mut img = Image::new(camera.width, camera.height, channels);
    let kernel = ScatterKernel::new(cfg, &grids[0].geom);
    let bg = backgrounds(grids, cfg);
    let row_len = (camera.width * channels) as usize;
    img.data.par_chunks_mut(row_len).enumerate().for_each(|(y, row)| {
        let mut px = [0.0f64; 3];
        for x in 0..camera.width as usize {
            if !rect.contains(x as u32, y as u32) {
                let dst = &mut row[x * channels as usize..(x + 1) * channels as usize];
                for c in 0..n {
                    dst[c] = bg[c] as f32;
                }
                continue;
            }
            let ray = camera.ray_unchecked(x as f64 + 0.5, y as f64 + 0.5);
            integrate_into(&ray, grids, hull, cfg, kernel.as_ref(), &bg, &mut px[..n]);
            let dst = &mut row[x * channels as usize..(x + 1) * channels as usize];
            for c in 0..n {
                dst[c] = px[c] as f32;
            }
        }
    });
    Ok(img)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::{Aabb, Channel};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn geom(n: usize) -> GridGeometry {
        GridGeometry::new(n, n, n, Pt3::new(0.0, 0.0, 0.0), 1.0).unwrap()
    }

    fn cfg() -> RenderConfig {
        RenderConfig::default()
    }

    fn ray(o: [f64; 3], d: [f64; 3]) -> Ray {
        Ray {
            origin: Pt3::new(o[0], o[1], o[2]),
            direction: Vec3::new(d[0], d[1], d[2]).normalize(),
        }
    }

    #[test]
    fn missing_ray_has_no_samples() {
        let g = VoxelGrid::filled(geom(4), Channel::Red, 1.0);
        assert!(march(&ray([10.0, 10.0, -5.0], [0.0, 0.0, 1.0]), &g).is_empty());
    }

    #[test]
    fn face_on_ray_samples_every_voxel() {
        let g = VoxelGrid::filled(geom(64), Channel::Red, 1.0);
        let s = march(&ray([10.3, 20.7, -3.0], [0.0, 0.0, 1.0]), &g);
        assert_eq!(s.len(), 64);
        for (n, p) in s.iter().enumerate() {
            assert_eq!(p.order_k, n + 1);
            assert!((p.position.z - (n as f64 + 0.5)).abs() < 1e-9);
            assert_eq!(p.cell[2], n);
        }
    }

    // Chord through a box from an independent parametric clip.
    fn chord_oracle(b: &Aabb, r: &Ray) -> f64 {
        let mut lo = f64::NEG_INFINITY;
        let mut hi = f64::INFINITY;
        for d in 0..3 {
            let (o, v) = (r.origin[d], r.direction[d]);
            if v == 0.0 {
                if o < b.min[d] || o > b.max[d] {
                    return 0.0;
                }
                continue;
            }
            let a = (b.min[d] - o) / v;
            let c = (b.max[d] - o) / v;
            lo = lo.max(a.min(c));
            hi = hi.min(a.max(c));
        }
        (hi - lo.max(0.0)).max(0.0)
    }

    proptest! {
        #[test]
        fn diagonal_sample_count_matches_chord(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let g = VoxelGrid::filled(geom(16), Channel::Red, 1.0);
            let o = [rng.random_range(-20.0..36.0), rng.random_range(-20.0..36.0), -15.0];
            let target = [rng.random_range(0.0..16.0), rng.random_range(0.0..16.0), rng.random_range(0.0..16.0)];
            let r = ray(o, [target[0] - o[0], target[1] - o[1], target[2] - o[2]]);
            let chord = chord_oracle(&g.geom.bounds(), &r);
            let samples = march(&r, &g);
            prop_assert_eq!(samples.len(), (chord + 1e-9).floor() as usize);
            for w in samples.windows(2) {
                prop_assert!(((w[1].position - w[0].position).norm() - 1.0).abs() < 1e-9);
            }
        }

        #[test]
        fn transparency_after_k_samples(k in 1usize..=64, tau in 0.01f64..0.99) {
            let mut t = 1.0f64;
            for _ in 0..k {
                t *= 1.0 - tau;
            }
            prop_assert_eq!(t, transparency_unchecked(k + 1, tau));
        }

        #[test]
        fn pixel_monotone_in_emission(seed in any::<u64>(), bump in 0.0f32..50.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let ge = geom(6);
            let mut g = VoxelGrid::from_fn(ge, Channel::Red, |_| rng.random_range(0.0..100.0));
            let r = ray([rng.random_range(0.5..5.5), rng.random_range(0.5..5.5), -2.0], [0.1, -0.05, 1.0]);
            let before = integrate_ray(&r, std::slice::from_ref(&g), None, &cfg()).unwrap()[0];
            let key = rng.random_range(0..ge.key_count());
            g.values[key] += bump;
            let after = integrate_ray(&r, &[g], None, &cfg()).unwrap()[0];
            prop_assert!(after >= before);
        }

        #[test]
        fn render_is_linear(seed in any::<u64>(), a in 0.1f64..10.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let ge = geom(6);
            let g = VoxelGrid::from_fn(ge, Channel::Red, |_| rng.random_range(0.0..100.0));
            let scaled = VoxelGrid { values: g.values.iter().map(|v| (*v as f64 * a) as f32).collect(), ..g.clone() };
            let r = ray([3.2, 2.9, -2.0], [0.2, 0.1, 1.0]);
            let base = integrate_ray(&r, &[g], None, &cfg()).unwrap()[0];
            let s = integrate_ray(&r, &[scaled], None, &cfg()).unwrap()[0];
            prop_assert!((s - a * base).abs() <= 1e-6 * (a * base).abs().max(1e-12));
        }
    }

    #[test]
    fn transparency_examples() {
        assert_eq!(sample_transparency(1, 0.05).unwrap(), 1.0);
        assert!((sample_transparency(2, 0.05).unwrap() - 0.95).abs() < 1e-15);
        let direct = 0.95f64.powi(19);
        assert!((sample_transparency(20, 0.05).unwrap() - direct).abs() < 1e-15);
        assert!((direct - 0.3774).abs() < 1e-4);
        assert!(sample_transparency(0, 0.05).is_err());
    }

    #[test]
    fn empty_volume_shows_background() {
        let g = VoxelGrid::filled(geom(4), Channel::Red, 0.0);
        let c = RenderConfig {
            background: [7.0, 0.0, 0.0],
            ..cfg()
        };
        let px = integrate_ray(&ray([1.5, 1.5, -1.0], [0.0, 0.0, 1.0]), &[g], None, &c).unwrap();
        assert!((px[0] - 7.0 * 0.95f64.powi(4)).abs() < 1e-12);
        let miss = VoxelGrid::filled(geom(4), Channel::Red, 0.0);
        let px = integrate_ray(&ray([9.0, 9.0, -1.0], [0.0, 0.0, 1.0]), &[miss], None, &c).unwrap();
        assert_eq!(px[0], 7.0);
    }

    #[test]
    fn single_sample_hand_value() {
        let ge = GridGeometry::new(1, 1, 1, Pt3::new(0.0, 0.0, 0.0), 1.0).unwrap();
        let g = VoxelGrid::filled(ge, Channel::Red, 100.0);
        let px = integrate_ray(&ray([0.5, 0.5, -1.0], [0.0, 0.0, 1.0]), &[g], None, &cfg()).unwrap();
        assert!((px[0] - 5.0).abs() < 1e-12);
    }

    #[test]
    fn slab_matches_geometric_series() {
        let e = 80.0;
        let b = 12.0;
        for n in [1usize, 5, 17, 64] {
            let ge = GridGeometry::new(3, 3, n, Pt3::new(0.0, 0.0, 0.0), 1.0).unwrap();
            let g = VoxelGrid::filled(ge, Channel::Green, e as f32);
            let c = RenderConfig {
                background: [0.0, b as f32, 0.0],
                ..cfg()
            };
            let px = integrate_ray(&ray([1.5, 1.5, -4.0], [0.0, 0.0, 1.0]), &[g], None, &c).unwrap()[0];
            let q = 0.95f64.powi(n as i32);
            let closed = e * (1.0 - q) + q * b;
            assert!((px - closed).abs() <= 1e-6 * closed, "n={n}: {px} vs {closed}");
        }
    }

    #[test]
    fn hull_gates_emission() {
        let ge = geom(2);
        let g = VoxelGrid::filled(ge, Channel::Red, 10.0);
        let mut tags = vec![0u32; 8];
        tags[ge.voxel_index(0, 0, 0)] = 1;
        tags[ge.voxel_index(0, 0, 1)] = 1;
        let hull = HullTags::from_tags(ge, tags, 1).unwrap();
        let inside = integrate_ray(
            &ray([0.5, 0.5, -1.0], [0.0, 0.0, 1.0]),
            std::slice::from_ref(&g),
            Some(&hull),
            &cfg(),
        )
        .unwrap()[0];
        let outside = integrate_ray(&ray([1.5, 1.5, -1.0], [0.0, 0.0, 1.0]), &[g], Some(&hull), &cfg()).unwrap()[0];
        assert!((inside - 10.0 * (1.0 - 0.95f64.powi(2))).abs() < 1e-12);
        assert_eq!(outside, 0.0);
    }

    #[test]
    fn sentinel_reads_as_zero_emission() {
        let ge = geom(3);
        let g = VoxelGrid::filled(ge, Channel::Red, -1.0);
        let px = integrate_ray(&ray([1.5, 1.5, -1.0], [0.0, 0.0, 1.0]), &[g], None, &cfg()).unwrap();
        assert_eq!(px[0], 0.0);
    }

    #[test]
    fn mismatched_grids_rejected() {
        let a = VoxelGrid::filled(geom(3), Channel::Red, 1.0);
        let b = VoxelGrid::filled(geom(4), Channel::Green, 1.0);
        assert!(matches!(
            integrate_ray(&ray([0.0; 3], [0.0, 0.0, 1.0]), &[a, b], None, &cfg()),
            Err(Error::Usage(_))
        ));
    }

    #[test]
    fn in_scatter_cases() {
        let ge = geom(8);
        let p = Pt3::new(4.0, 4.0, 4.0);
        let view = Vec3::new(0.0, 0.0, 1.0);
        let on = RenderConfig {
            scattering_enabled: true,
            sigma_s: 1.0,
            ..cfg()
        };
        let zero = VoxelGrid::filled(ge, Channel::Red, 0.0);
        assert_eq!(in_scatter(&[zero], &p, &view, &on).unwrap(), vec![0.0]);

        let uniform = VoxelGrid::filled(ge, Channel::Red, 42.0);
        let off = RenderConfig { sigma_s: 0.0, ..on };
        assert_eq!(
            in_scatter(std::slice::from_ref(&uniform), &p, &view, &off).unwrap(),
            vec![0.0]
        );
        let disabled = RenderConfig {
            scattering_enabled: false,
            ..on
        };
        assert_eq!(
            in_scatter(std::slice::from_ref(&uniform), &p, &view, &disabled).unwrap(),
            vec![0.0]
        );

        let s = in_scatter(&[uniform], &p, &view, &on).unwrap()[0];
        assert!((s - 42.0).abs() <= 1e-2 * 42.0, "{s}");
    }

    #[test]
    fn fibonacci_directions_are_unit_and_balanced() {
        let dirs = fibonacci_sphere(1000);
        assert!(dirs.iter().all(|d| (d.norm() - 1.0).abs() < 1e-12));
        let mean: Vec3 = dirs.iter().sum::<Vec3>() / 1000.0;
        assert!(mean.norm() < 1e-2);
    }

    #[test]
    fn phase_integrates_to_one_over_the_sphere() {
        use crate::radiometry::{phase_hg, PhaseConfig};
        let n = 20_000;
        let dirs = fibonacci_sphere(n);
        let axis = Vec3::new(0.3, -0.5, 0.8).normalize();
        for g in [-0.5, 0.0, 0.5] {
            let cfg = PhaseConfig::new(g).unwrap();
            let sum: f64 = dirs
                .iter()
                .map(|d| phase_hg(cfg, axis.dot(d).clamp(-1.0, 1.0)).unwrap())
                .sum();
            let integral = sum * 4.0 * std::f64::consts::PI / n as f64;
            assert!((integral - 1.0).abs() <= 1e-3, "g={g}: {integral}");
        }
    }

    fn blob() -> (Camera, VoxelGrid) {
        let bbox = Aabb::centered_cube(Pt3::origin(), 0.2).unwrap();
        let ge = GridGeometry::cube(64, &bbox).unwrap();
        let g = VoxelGrid::from_fn(ge, Channel::Red, |p| {
            (200.0 * (-(p.coords.norm_squared()) / 0.003).exp()) as f32
        });
        let cam = Camera::look_at(Pt3::new(0.3, 0.0, 0.02), Pt3::origin(), Vec3::z(), 60.0, 320, 240).unwrap();
        (cam, g)
    }

    #[test]
    fn parallel_render_bit_identical() {
        let (cam, g) = blob();
        let grids = [g.clone(), g.clone(), g];
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let four = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
        let a = one.install(|| render_view(&cam, &grids, None, &cfg()).unwrap());
        let b = four.install(|| render_view(&cam, &grids, None, &cfg()).unwrap());
        assert_eq!(a.channels, 3);
        assert!(a.data.iter().zip(&b.data).all(|(x, y)| x.to_bits() == y.to_bits()));
        assert!(a.data.iter().any(|v| *v > 1.0));
    }

    #[test]
    fn hull_tags_irrelevant_where_emission_is_zero() {
        let (cam, _) = blob();
        let bbox = Aabb::centered_cube(Pt3::origin(), 0.2).unwrap();
        let ge = GridGeometry::cube(16, &bbox).unwrap();
        let g = VoxelGrid::from_fn(ge, Channel::Red, |p| if p.x > 0.0 { 50.0 } else { 0.0 });
        let mut tags = vec![1u32; ge.voxel_count()];
        for (v, t) in tags.iter_mut().enumerate() {
            let (i, _, _) = ge.voxel_coords(v);
            if i < 7 {
                *t = 0;
            }
        }
        let hull = HullTags::from_tags(ge, tags, 1).unwrap();
        let a = render_view(&cam, std::slice::from_ref(&g), Some(&hull), &cfg()).unwrap();
        let b = render_view(&cam, &[g], None, &cfg()).unwrap();
        assert_eq!(a, b);
    }
}
