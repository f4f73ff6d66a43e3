//! Iterative reconstruction of key-point grids from multi-view images.
//!
//! Each iteration renders the current grids into every view, takes the
//! signed residual against the observed images inside the bounding box, and
//! traces every flame pixel's ray again to push a share of its residual
//! into the key points around each in-hull sample. The share falls off with
//! the sample order (the transparency in front of it) and with the distance
//! from the sample to the key point.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::Camera;
use crate::image::{FlameMask, Image, Rect};
use crate::preprocess::{bounding_box, threshold_mask};
use crate::radiometry::ColorTempMap;
use crate::render::{render_view_refs, transparency_unchecked, Marcher, RenderConfig};
use crate::volume::{compute_visual_hull, Channel, GridGeometry, HullTags, VoxelGrid, OUTSIDE_HULL};

/// Ray chunks used for the fixed-order merge in deterministic mode.
const DETERMINISTIC_CHUNKS: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReconstructionConfig {
    pub alpha_l: f64,
    /// Distance falloff for a volume whose longest side is `reference_edge`.
    pub alpha_d: f64,
    /// Box side (m) at which `alpha_d` applies unscaled.
    pub reference_edge: f64,
    pub max_iters: usize,
    pub converge_eps: f64,
    pub rng_seed: u64,
    pub g_sigma: f64,
    /// Unit weights and a fixed-order merge, for bit-reproducible runs.
    pub deterministic: bool,
    pub render: RenderConfig,
}

impl Default for ReconstructionConfig {
    fn default() -> Self {
        ReconstructionConfig {
            alpha_l: 0.001,
            alpha_d: 1.0,
            reference_edge: 0.2,
            max_iters: 200,
            converge_eps: 0.01,
            rng_seed: 0,
            g_sigma: 0.1,
            deterministic: false,
            render: RenderConfig::default(),
        }
    }
}

impl ReconstructionConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v > 0.0 && v.is_finite();
        if !positive(self.alpha_l) || !positive(self.alpha_d) {
            return Err(Error::Domain("alpha_l and alpha_d must be positive".into()));
        }
        if !positive(self.reference_edge) {
            return Err(Error::Domain("reference edge must be positive".into()));
        }
        if !positive(self.converge_eps) {
            return Err(Error::Domain("convergence threshold must be positive".into()));
        }
        if !(self.g_sigma >= 0.0 && self.g_sigma.is_finite()) {
            return Err(Error::Domain("g_sigma must be nonnegative".into()));
        }
        self.render.validate()
    }

    /// `alpha_d` rescaled to the size of `geom`'s box.
    pub fn effective_alpha_d(&self, geom: &GridGeometry) -> f64 {
        let side = geom.nx.max(geom.ny).max(geom.nz) as f64 * geom.edge;
        self.alpha_d * self.reference_edge / side
    }
}

/// The calibrated inputs of one reconstruction.
#[derive(Debug, Clone)]
pub struct Observations {
    pub cameras: Vec<Camera>,
    /// Background-blanked input images, one per camera.
    pub images: Vec<Image>,
    pub masks: Vec<FlameMask>,
    pub bbox: Rect,
}

impl Observations {
    pub fn new(cameras: Vec<Camera>, images: Vec<Image>, masks: Vec<FlameMask>, bbox: Rect) -> Result<Self> {
        if cameras.len() < 2 {
            return Err(Error::Usage("reconstruction needs at least two views".into()));
        }
        if images.len() != cameras.len() || masks.len() != cameras.len() {
            return Err(Error::Usage(format!(
                "{} cameras, {} images, {} masks",
                cameras.len(),
                images.len(),
                masks.len()
            )));
        }
        let (w, h) = (images[0].width, images[0].height);
        for (i, ((c, im), m)) in cameras.iter().zip(&images).zip(&masks).enumerate() {
            if c.width != w || c.height != h || im.width != w || im.height != h || m.width != w || m.height != h {
                return Err(Error::Usage(format!("view {i} differs in size")));
            }
            if im.channels != images[0].channels {
                return Err(Error::Usage(format!("view {i} differs in channel count")));
            }
        }
        if !bbox.fits(w, h) {
            return Err(Error::Usage("bounding box exceeds the images".into()));
        }
        Ok(Observations {
            cameras,
            images,
            masks,
            bbox,
        })
    }

    /// Thresholds raw frames into masks and blanked images and derives the
    /// dilated bounding box.
    pub fn from_frames(cameras: Vec<Camera>, frames: &[Image], threshold: f32, dilate: u32) -> Result<Self> {
        let (masks, images): (Vec<_>, Vec<_>) = frames.iter().map(|f| threshold_mask(f, threshold)).unzip();
        let bbox = bounding_box(&masks, dilate)?;
        Observations::new(cameras, images, masks, bbox)
    }

    pub fn visual_hull(&self, geom: &GridGeometry) -> Result<HullTags> {
        compute_visual_hull(geom, &self.masks, &self.cameras)
    }

    fn image_channel(&self, channel: Channel) -> Result<u32> {
        let channels = self.images[0].channels;
        match (channels, channel) {
            (1, _) => Ok(0),
            (3, Channel::Temperature) => Ok(1),
            (3, c) => Ok(c.rgb_index().expect("rgb")),
            _ => Err(Error::Usage("unsupported image channel count".into())),
        }
    }
}

/// Signed per-pixel difference, possibly multi-channel.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualField {
    pub width: u32,
    pub height: u32,
    pub channels: u32,
    pub data: Vec<f32>,
}

impl ResidualField {
    #[inline]
    pub fn get(&self, x: u32, y: u32, c: u32) -> f32 {
        self.data[((y * self.width + x) * self.channels + c) as usize]
    }
}

/// `src - rec` inside `bbox`, zero elsewhere.
pub fn residual_image(src: &Image, rec: &Image, bbox: Rect) -> Result<ResidualField> {
    if !src.same_shape(rec) {
        return Err(Error::Usage("residual of differently shaped images".into()));
    }
    if !bbox.fits(src.width, src.height) {
        return Err(Error::Usage("bounding box exceeds the image".into()));
    }
    let c = src.channels;
    let mut data = vec![0.0f32; src.data.len()];
    for y in bbox.y0..=bbox.y1 {
        for x in bbox.x0..=bbox.x1 {
            for ch in 0..c {
                let i = src.index(x, y, ch);
                data[i] = src.data[i] - rec.data[i];
            }
        }
    }
    Ok(ResidualField {
        width: src.width,
        height: src.height,
        channels: c,
        data,
    })
}

/// `alpha_l * delta_l * (1 - tau)^(k-1) * exp(-alpha_d * dist)`, with the
/// distance falloff `cfg.alpha_d` taken as is.
pub fn adjustment_value(delta_l: f64, k: usize, dist: f64, cfg: &ReconstructionConfig) -> Result<f64> {
    if k < 1 {
        return Err(Error::Domain("sample order starts at 1".into()));
    }
    if !(dist >= 0.0) {
        return Err(Error::Domain(format!("distance {dist} must be nonnegative")));
    }
    Ok(cfg.alpha_l * delta_l * transparency_unchecked(k, cfg.render.tau) * (-cfg.alpha_d * dist).exp())
}

/// Per-channel RMSE over the pixels of `bbox`.
pub fn rmse_pixels(a: &Image, b: &Image, bbox: Rect) -> Result<Vec<f64>> {
    if !a.same_shape(b) {
        return Err(Error::Usage("RMSE of differently shaped images".into()));
    }
    if !bbox.fits(a.width, a.height) {
        return Err(Error::Usage("empty or out-of-bounds bounding box".into()));
    }
    let mut sums = vec![0.0f64; a.channels as usize];
    for y in bbox.y0..=bbox.y1 {
        for x in bbox.x0..=bbox.x1 {
            for (c, s) in sums.iter_mut().enumerate() {
                let d = a.get(x, y, c as u32) as f64 - b.get(x, y, c as u32) as f64;
                *s += d * d;
            }
        }
    }
    let n = bbox.area() as f64;
    Ok(sums.into_iter().map(|s| (s / n).sqrt()).collect())
}

/// RMSE over the key points that belong to the hull.
pub fn rmse_volume(a: &VoxelGrid, b: &VoxelGrid, hull: &HullTags) -> Result<f64> {
    if !a.geom.same_lattice(&b.geom) || !a.geom.same_lattice(&hull.geom) {
        return Err(Error::Usage("volume RMSE across different lattices".into()));
    }
    let mut sum = 0.0f64;
    let mut n = 0usize;
    for key in 0..a.values.len() {
        if hull.key_inside(key) {
            let d = a.values[key] as f64 - b.values[key] as f64;
            sum += d * d;
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::EmptyHull);
    }
    Ok((sum / n as f64).sqrt())
}

/// Grid holding zero at hull key points and the sentinel elsewhere.
pub fn initial_grid(hull: &HullTags, channel: Channel) -> VoxelGrid {
    let values = (0..hull.geom.key_count())
        .map(|k| if hull.key_inside(k) { 0.0 } else { OUTSIDE_HULL })
        .collect();
    VoxelGrid {
        geom: hull.geom,
        values,
        channel,
    }
}

#[derive(Debug, Clone, Copy)]
struct FlameRay {
    view: u32,
    x: u32,
    y: u32,
}

fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn ray_seed(seed: u64, iteration: u64, view: u32, pixel: u64) -> u64 {
    mix64(mix64(mix64(seed ^ mix64(iteration)) ^ view as u64) ^ pixel)
}

/// Shared state of one adjustment pass.
struct PassContext<'a> {
    geom: GridGeometry,
    hull: &'a HullTags,
    cameras: &'a [Camera],
    residuals: &'a [ResidualField],
    cfg: &'a ReconstructionConfig,
    alpha_d: f64,
    iteration: u64,
    channels: usize,
}

impl PassContext<'_> {
    /// Traces one flame ray, handing `(key, channel, amount)` to `add`.
    #[inline]
    fn trace(&self, r: FlameRay, mut add: impl FnMut(usize, usize, f64)) {
        let res = &self.residuals[r.view as usize];
        let mut delta = [0.0f64; 3];
        for (c, d) in delta.iter_mut().enumerate().take(self.channels) {
            *d = res.get(r.x, r.y, c as u32) as f64;
        }
        if delta[..self.channels].iter().all(|d| *d == 0.0) {
            return;
        }
        let cam = &self.cameras[r.view as usize];
        let ray = cam.ray_unchecked(r.x as f64 + 0.5, r.y as f64 + 0.5);
        let mut rng = (!self.cfg.deterministic).then(|| {
            let pixel = r.y as u64 * cam.width as u64 + r.x as u64;
            ChaCha8Rng::seed_from_u64(ray_seed(self.cfg.rng_seed, self.iteration, r.view, pixel))
        });
        let normal = Normal::new(1.0, self.cfg.g_sigma).expect("validated sigma");
        let tau = self.cfg.render.tau;
        let edge = self.geom.edge;
        let mut trans = 1.0f64;
        for s in Marcher::new(&ray, &self.geom) {
            if self.hull.hull_contains(s.voxel(&self.geom)) {
                let g = match rng.as_mut() {
                    Some(rng) => normal.sample(rng).clamp(0.0, 2.0),
                    None => 1.0,
                };
                let scale = self.cfg.alpha_l * trans * g;
                let corners = self.geom.voxel_corners(s.cell[0], s.cell[1], s.cell[2]);
                let [fx, fy, fz] = s.frac;
                for (n, &key) in corners.iter().enumerate() {
                    let dx = (n & 1) as f64 - fx;
                    let dy = ((n >> 1) & 1) as f64 - fy;
                    let dz = ((n >> 2) & 1) as f64 - fz;
                    let dist = edge * (dx * dx + dy * dy + dz * dz).sqrt();
                    let w = scale * (-self.alpha_d * dist).exp();
                    for (c, d) in delta.iter().enumerate().take(self.channels) {
                        if *d != 0.0 {
                            add(key, c, w * d);
                        }
                    }
                }
            }
            trans *= 1.0 - tau;
        }
    }
}

/// One back-projection pass over every flame ray of every view.
///
/// `residuals[v]` carries one channel per grid. Key points outside the
/// hull are never touched and hull key points never drop below zero.
#[allow(clippy::too_many_arguments)]
pub fn adjust_pass(
    grids: &mut [VoxelGrid],
    hull: &HullTags,
    cameras: &[Camera],
    masks: &[FlameMask],
    residuals: &[ResidualField],
    cfg: &ReconstructionConfig,
    iteration: u64,
) -> Result<()> {
    let first = grids.first().ok_or_else(|| Error::Usage("no grids to adjust".into()))?;
    let geom = first.geom;
    if grids.len() > 3 || grids.iter().any(|g| !g.geom.same_lattice(&geom)) || !hull.geom.same_lattice(&geom) {
        return Err(Error::Usage(
            "grids and hull must share one lattice (at most three grids)".into(),
        ));
    }
    if masks.len() != cameras.len() || residuals.len() != cameras.len() {
        return Err(Error::Usage("one mask and residual per camera required".into()));
    }
    for (i, (r, m)) in residuals.iter().zip(masks).enumerate() {
        if r.channels as usize != grids.len() || r.width != m.width || r.height != m.height {
            return Err(Error::Usage(format!(
                "residual {i} does not match its mask or the grid count"
            )));
        }
    }
    let rays: Vec<FlameRay> = masks
        .iter()
        .enumerate()
        .flat_map(|(v, m)| {
            (0..m.height).flat_map(move |y| {
                (0..m.width)
                    .filter(move |&x| m.get(x, y))
                    .map(move |x| FlameRay { view: v as u32, x, y })
            })
        })
        .collect();
    let ctx = PassContext {
        geom,
        hull,
        cameras,
        residuals,
        cfg,
        alpha_d: cfg.effective_alpha_d(&geom),
        iteration,
        channels: grids.len(),
    };
    let nk = geom.key_count();
    let nc = grids.len();
    let totals: Vec<f64> = if cfg.deterministic {
        let chunk = rays.len().div_ceil(DETERMINISTIC_CHUNKS).max(1);
        let partials: Vec<Vec<f64>> = rays
            .par_chunks(chunk)
            .map(|chunk| {
                let mut buf = vec![0.0f64; nk * nc];
                for r in chunk {
                    ctx.trace(*r, |key, c, v| buf[c * nk + key] += v);
                }
                buf
            })
            .collect();
        let mut total = vec![0.0f64; nk * nc];
        for p in &partials {
            for (t, v) in total.iter_mut().zip(p) {
                *t += v;
            }
        }
        total
    } else {
        // per-thread partial buffers; the merge order follows the scheduler
        rays.par_iter()
            .fold(
                || vec![0.0f64; nk * nc],
                |mut buf, r| {
                    ctx.trace(*r, |key, c, v| buf[c * nk + key] += v);
                    buf
                },
            )
            .reduce_with(|mut a, b| {
                a.iter_mut().zip(&b).for_each(|(x, y)| *x += y);
                a
            })
            .unwrap_or_else(|| vec![0.0f64; nk * nc])
    };
    for (c, grid) in grids.iter_mut().enumerate() {
        let acc = &totals[c * nk..(c + 1) * nk];
        grid.values.par_iter_mut().zip(acc).for_each(|(v, a)| {
            if *a != 0.0 {
                *v = (*v as f64 + a).max(0.0) as f32;
            }
        });
    }
    Ok(())
}

/// Per-iteration record of one channel.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelTrace {
    pub channel: Channel,
    /// Mean over views of the bounding-box pixel RMSE.
    pub rmse: Vec<f64>,
    /// Elapsed milliseconds since the run began, at each evaluation.
    pub wall_ms: Vec<f64>,
    /// Key-point RMSE against the ground truth, when one was supplied.
    pub vol_rmse: Option<Vec<f64>>,
    /// Whether the loop stopped on the convergence rule rather than the cap.
    pub converged: bool,
}

impl ChannelTrace {
    pub fn len(&self) -> usize {
        self.rmse.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rmse.is_empty()
    }

    pub fn first_rmse(&self) -> f64 {
        self.rmse[0]
    }

    pub fn final_rmse(&self) -> f64 {
        *self.rmse.last().expect("at least one evaluation")
    }

    /// Adjustment passes performed.
    pub fn passes(&self) -> usize {
        self.rmse.len() - 1
    }
}

/// Traces of the channels reconstructed in one run.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationTrace {
    pub channels: Vec<ChannelTrace>,
}

impl IterationTrace {
    pub fn channel(&self, c: Channel) -> Option<&ChannelTrace> {
        self.channels.iter().find(|t| t.channel == c)
    }

    pub fn max_len(&self) -> usize {
        self.channels.iter().map(|t| t.len()).max().unwrap_or(0)
    }

    /// CSV with one row per evaluation. Channels that already stopped leave
    /// their cells empty; a temperature run reports under `rmse_g`.
    pub fn to_csv(&self) -> String {
        let with_vol = self.channels.iter().any(|t| t.vol_rmse.is_some());
        let mut out = String::from("iter,rmse_r,rmse_g,rmse_b,wall_ms");
        if with_vol {
            out.push_str(",vol_rmse");
        }
        out.push('\n');
        for i in 0..self.max_len() {
            let mut cells = [String::new(), String::new(), String::new()];
            let mut wall = 0.0f64;
            let mut vol = Vec::new();
            for t in &self.channels {
                if i >= t.len() {
                    continue;
                }
                let col = t.channel.rgb_index().unwrap_or(1) as usize;
                cells[col] = format!("{:.6}", t.rmse[i]);
                wall = wall.max(t.wall_ms[i]);
                if let Some(v) = &t.vol_rmse {
                    vol.push(v[i]);
                }
            }
            out.push_str(&format!("{i},{},{},{},{wall:.3}", cells[0], cells[1], cells[2]));
            if with_vol {
                if vol.is_empty() {
                    out.push(',');
                } else {
                    out.push_str(&format!(",{:.6}", vol.iter().sum::<f64>() / vol.len() as f64));
                }
            }
            out.push('\n');
        }
        out
    }
}

/// Extra inputs of a run.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Starting grids, one per reconstructed channel, instead of zeros.
    pub init: Option<Vec<VoxelGrid>>,
    /// Ground-truth grids for the volume RMSE column.
    pub truth: Option<Vec<VoxelGrid>>,
}

/// State handed to the observer after each evaluation.
#[derive(Debug)]
pub struct Snapshot<'a> {
    /// Number of adjustment passes applied so far.
    pub iteration: usize,
    pub grids: &'a [VoxelGrid],
    /// Current renders of every view (bounding box only).
    pub renders: &'a [Image],
    /// Pixel RMSE per reconstructed channel.
    pub rmse: &'a [f64],
    /// Channels still being adjusted.
    pub active: &'a [bool],
}

/// Observer that ignores every snapshot.
pub fn no_observer(_: &Snapshot<'_>) {}

#[derive(Debug, Clone)]
pub struct Reconstruction {
    pub grids: Vec<VoxelGrid>,
    pub hull: HullTags,
    pub trace: IterationTrace,
}

/// Reconstructs several channels over one hull. Channels are independent:
/// each follows its own residuals and stops on its own convergence rule.
pub fn reconstruct_channels(
    obs: &Observations,
    hull: &HullTags,
    channels: &[Channel],
    cfg: &ReconstructionConfig,
    opts: &RunOptions,
    observer: &mut dyn FnMut(&Snapshot<'_>),
) -> Result<Reconstruction> {
    cfg.validate()?;
    if channels.is_empty() || channels.len() > 3 {
        return Err(Error::Usage("reconstruct between one and three channels".into()));
    }
    if hull.is_empty() {
        return Err(Error::EmptyHull);
    }
    if hull.n_views != obs.cameras.len() {
        return Err(Error::Usage("hull was built from a different view count".into()));
    }
    let src_channels: Vec<u32> = channels.iter().map(|c| obs.image_channel(*c)).collect::<Result<_>>()?;
    let mut grids: Vec<VoxelGrid> = match &opts.init {
        Some(init) => {
            if init.len() != channels.len() || init.iter().any(|g| !g.geom.same_lattice(&hull.geom)) {
                return Err(Error::Usage(
                    "initial grids do not match the channels or lattice".into(),
                ));
            }
            init.clone()
        }
        None => channels.iter().map(|c| initial_grid(hull, *c)).collect(),
    };
    if let Some(truth) = &opts.truth {
        if truth.len() != channels.len() || truth.iter().any(|g| !g.geom.same_lattice(&hull.geom)) {
            return Err(Error::Usage(
                "ground-truth grids do not match the channels or lattice".into(),
            ));
        }
    }
    // observed image per view per reconstructed channel, joined into one
    // interleaved image so residuals line up with the grid order
    let nc = channels.len();
    let targets: Vec<Image> = obs
        .images
        .iter()
        .map(|im| {
            let mut t = Image::new(im.width, im.height, if nc == 1 { 1 } else { 3 });
            for y in 0..im.height {
                for x in 0..im.width {
                    for (c, &sc) in src_channels.iter().enumerate() {
                        t.set(x, y, c as u32, im.get(x, y, sc));
                    }
                }
            }
            t
        })
        .collect();

    let start = Instant::now();
    let mut traces: Vec<ChannelTrace> = channels
        .iter()
        .map(|&channel| ChannelTrace {
            channel,
            rmse: Vec::new(),
            wall_ms: Vec::new(),
            vol_rmse: opts.truth.as_ref().map(|_| Vec::new()),
            converged: false,
        })
        .collect();
    let mut active = vec![true; nc];
    let mut passes = 0usize;
    loop {
        let refs: Vec<&VoxelGrid> = grids.iter().collect();
        let renders: Vec<Image> = obs
            .cameras
            .iter()
            .map(|cam| render_view_refs(cam, &refs, Some(hull), &cfg.render, Some(obs.bbox)))
            .collect::<Result<_>>()?;
        let mut rmse = vec![0.0f64; nc];
        let mut residuals = Vec::with_capacity(renders.len());
        for (target, render) in targets.iter().zip(&renders) {
            let per = rmse_pixels(target, render, obs.bbox)?;
            for c in 0..nc {
                rmse[c] += per[c] / renders.len() as f64;
            }
            residuals.push(residual_image(target, render, obs.bbox)?);
        }
        let elapsed = start.elapsed().as_secs_f64() * 1e3;
        for c in 0..nc {
            if !active[c] {
                continue;
            }
            let t = &mut traces[c];
            let prev = t.rmse.last().copied();
            t.rmse.push(rmse[c]);
            t.wall_ms.push(elapsed);
            if let (Some(v), Some(truth)) = (t.vol_rmse.as_mut(), opts.truth.as_ref()) {
                v.push(rmse_volume(&grids[c], &truth[c], hull)?);
            }
            if rmse[c] == 0.0 || prev.is_some_and(|p| (p - rmse[c]).abs() < cfg.converge_eps) {
                t.converged = true;
                active[c] = false;
            } else if passes == cfg.max_iters {
                active[c] = false;
            }
        }
        observer(&Snapshot {
            iteration: passes,
            grids: &grids,
            renders: &renders,
            rmse: &rmse,
            active: &active,
        });
        if active.iter().all(|a| !a) {
            break;
        }
        // residuals of stopped channels are silenced so their grids freeze
        if nc == 1 || active.iter().any(|a| !a) {
            for r in residuals.iter_mut() {
                let stride = r.channels as usize;
                for px in r.data.chunks_exact_mut(stride) {
                    for (c, v) in px.iter_mut().enumerate() {
                        if c >= nc || !active[c] {
                            *v = 0.0;
                        }
                    }
                }
            }
        }
        let residuals: Vec<ResidualField> = if nc == 2 {
            // the render carried a padding channel; drop it
            residuals
                .into_iter()
                .map(|r| ResidualField {
                    channels: 2,
                    data: r.data.chunks_exact(3).flat_map(|p| [p[0], p[1]]).collect(),
                    ..r
                })
                .collect()
        } else {
            residuals
        };
        adjust_pass(
            &mut grids,
            hull,
            &obs.cameras,
            &obs.masks,
            &residuals,
            cfg,
            passes as u64,
        )?;
        passes += 1;
    }
    Ok(Reconstruction {
        grids,
        hull: hull.clone(),
        trace: IterationTrace { channels: traces },
    })
}

/// Reconstructs a single channel; see [`reconstruct_channels`].
pub fn reconstruct_channel(
    obs: &Observations,
    hull: &HullTags,
    channel: Channel,
    cfg: &ReconstructionConfig,
    opts: &RunOptions,
    observer: &mut dyn FnMut(&Snapshot<'_>),
) -> Result<(VoxelGrid, ChannelTrace)> {
    let mut r = reconstruct_channels(obs, hull, &[channel], cfg, opts, observer)?;
    Ok((r.grids.remove(0), r.trace.channels.remove(0)))
}

/// Red, green and blue grids over the hull of the observations.
pub fn reconstruct_color(
    obs: &Observations,
    geom: &GridGeometry,
    cfg: &ReconstructionConfig,
    opts: &RunOptions,
    observer: &mut dyn FnMut(&Snapshot<'_>),
) -> Result<Reconstruction> {
    let hull = obs.visual_hull(geom)?;
    reconstruct_channels(obs, &hull, &Channel::RGB, cfg, opts, observer)
}

#[derive(Debug, Clone)]
pub struct TemperatureReconstruction {
    /// Kelvin at hull key points, the sentinel elsewhere.
    pub temperature: VoxelGrid,
    pub green: VoxelGrid,
    pub hull: HullTags,
    pub trace: ChannelTrace,
    /// Hull key points whose green value fell outside the map.
    pub clamped: usize,
}

impl TemperatureReconstruction {
    /// `None` where there is no medium.
    pub fn kelvin_at(&self, key: usize) -> Option<f64> {
        self.hull.key_inside(key).then(|| self.temperature.values[key] as f64)
    }
}

/// Converts a green grid to kelvin through the inverse map. Returns the
/// temperature grid and the number of clamped hull key points.
pub fn green_to_temperature(green: &VoxelGrid, hull: &HullTags, map: &ColorTempMap) -> (VoxelGrid, usize) {
    let mut clamped = 0;
    let values = green
        .values
        .iter()
        .enumerate()
        .map(|(k, &g)| {
            if !hull.key_inside(k) {
                return OUTSIDE_HULL;
            }
            let l = map.temp_from_green(g as f64);
            clamped += l.clamped as usize;
            l.kelvin as f32
        })
        .collect();
    (
        VoxelGrid {
            geom: green.geom,
            values,
            channel: Channel::Temperature,
        },
        clamped,
    )
}

/// RGB emission grids for a temperature grid; the sentinel carries over.
pub fn temperature_to_rgb(temperature: &VoxelGrid, map: &ColorTempMap) -> Vec<VoxelGrid> {
    Channel::RGB
        .iter()
        .map(|&ch| {
            let c = ch.rgb_index().expect("rgb") as usize;
            let values = temperature
                .values
                .iter()
                .map(|&t| {
                    if t < 0.0 {
                        OUTSIDE_HULL
                    } else {
                        map.rgb_of(t as f64)[c] as f32
                    }
                })
                .collect();
            VoxelGrid {
                geom: temperature.geom,
                values,
                channel: ch,
            }
        })
        .collect()
}

/// Reconstructs the green channel and reads it back as temperature.
pub fn reconstruct_temperature(
    obs: &Observations,
    geom: &GridGeometry,
    map: &ColorTempMap,
    cfg: &ReconstructionConfig,
    opts: &RunOptions,
    observer: &mut dyn FnMut(&Snapshot<'_>),
) -> Result<TemperatureReconstruction> {
    let hull = obs.visual_hull(geom)?;
    let (green, trace) = reconstruct_channel(obs, &hull, Channel::Green, cfg, opts, observer)?;
    let (temperature, clamped) = green_to_temperature(&green, &hull, map);
    Ok(TemperatureReconstruction {
        temperature,
        green,
        hull,
        trace,
        clamped,
    })
}
