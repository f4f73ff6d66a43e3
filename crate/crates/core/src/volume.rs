//! Key-point lattices, trilinear sampling, grid sizing and the visual hull.
//!
//! A grid of `nx * ny * nz` cubic voxels stores one value per voxel vertex
//! ("key point"), so a channel holds `(nx+1)(ny+1)(nz+1)` values laid out
//! x-fastest, then y, then z.

use std::fs;
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{Camera, Pt3, Vec3};
use crate::image::FlameMask;

/// Value stored at key points outside the visual hull.
pub const OUTSIDE_HULL: f32 = -1.0;

/// Default ratio of projected pixels per voxel used to size grids.
pub const DEFAULT_ALPHA: f64 = 1.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Channel {
    Red,
    Green,
    Blue,
    Temperature,
}

impl Channel {
    pub const RGB: [Channel; 3] = [Channel::Red, Channel::Green, Channel::Blue];

    /// Position of this channel in an RGB image, if it has one.
    pub fn rgb_index(self) -> Option<u32> {
        match self {
            Channel::Red => Some(0),
            Channel::Green => Some(1),
            Channel::Blue => Some(2),
            Channel::Temperature => None,
        }
    }
}

/// Axis-aligned world box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub min: Pt3,
    pub max: Pt3,
}

impl Aabb {
    pub fn new(min: Pt3, max: Pt3) -> Result<Self> {
        if !(0..3).all(|d| max[d] > min[d]) {
            return Err(Error::Domain("box must have positive extent on every axis".into()));
        }
        Ok(Aabb { min, max })
    }

    pub fn centered_cube(center: Pt3, side: f64) -> Result<Self> {
        let h = Vec3::repeat(side / 2.0);
        Aabb::new(center - h, center + h)
    }

    pub fn lengths(&self) -> Vec3 {
        self.max - self.min
    }

    pub fn center(&self) -> Pt3 {
        nalgebra::center(&self.min, &self.max)
    }

    pub fn corners(&self) -> [Pt3; 8] {
        let (a, b) = (self.min, self.max);
        let mut out = [a; 8];
        for (i, c) in out.iter_mut().enumerate() {
            *c = Pt3::new(
                if i & 1 == 0 { a.x } else { b.x },
                if i & 2 == 0 { a.y } else { b.y },
                if i & 4 == 0 { a.z } else { b.z },
            );
        }
        out
    }

    /// Ray-box intersection by the slab method: `(t_enter, t_exit)` with
    /// `t_enter >= 0`, or `None` if the ray misses.
    pub fn intersect(&self, origin: &Pt3, dir: &Vec3) -> Option<(f64, f64)> {
        let mut t0 = 0.0f64;
        let mut t1 = f64::INFINITY;
        for d in 0..3 {
            if dir[d] == 0.0 {
                if origin[d] < self.min[d] || origin[d] > self.max[d] {
                    return None;
                }
                continue;
            }
            let inv = 1.0 / dir[d];
            let (mut near, mut far) = ((self.min[d] - origin[d]) * inv, (self.max[d] - origin[d]) * inv);
            if near > far {
                std::mem::swap(&mut near, &mut far);
            }
            t0 = t0.max(near);
            t1 = t1.min(far);
        }
        (t0 < t1).then_some((t0, t1))
    }
}

/// Lattice geometry shared by every channel of a volume.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridGeometry {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
    /// Minimal corner (meters).
    pub origin: Pt3,
    /// Voxel edge length (meters).
    pub edge: f64,
}

impl GridGeometry {
    pub fn new(nx: usize, ny: usize, nz: usize, origin: Pt3, edge: f64) -> Result<Self> {
        if nx == 0 || ny == 0 || nz == 0 {
            return Err(Error::Domain("grid needs at least one voxel per axis".into()));
        }
        if !(edge > 0.0 && edge.is_finite()) {
            return Err(Error::Domain(format!("voxel edge {edge} must be positive")));
        }
        Ok(GridGeometry {
            nx,
            ny,
            nz,
            origin,
            edge,
        })
    }

    /// Cubic lattice of `n^3` voxels filling a cube.
    pub fn cube(n: usize, bbox: &Aabb) -> Result<Self> {
        let side = bbox.lengths().max();
        GridGeometry::new(n, n, n, bbox.min, side / n as f64)
    }

    pub fn key_dims(&self) -> [usize; 3] {
        [self.nx + 1, self.ny + 1, self.nz + 1]
    }

    pub fn key_count(&self) -> usize {
        (self.nx + 1) * (self.ny + 1) * (self.nz + 1)
    }

    pub fn voxel_count(&self) -> usize {
        self.nx * self.ny * self.nz
    }

    #[inline]
    pub fn key_index(&self, i: usize, j: usize, k: usize) -> usize {
        (k * (self.ny + 1) + j) * (self.nx + 1) + i
    }

    #[inline]
    pub fn voxel_index(&self, i: usize, j: usize, k: usize) -> usize {
        (k * self.ny + j) * self.nx + i
    }

    pub fn voxel_coords(&self, idx: usize) -> (usize, usize, usize) {
        (idx % self.nx, (idx / self.nx) % self.ny, idx / (self.nx * self.ny))
    }

    pub fn key_coords(&self, idx: usize) -> (usize, usize, usize) {
        let (kx, ky) = (self.nx + 1, self.ny + 1);
        (idx % kx, (idx / kx) % ky, idx / (kx * ky))
    }

    pub fn key_position(&self, i: usize, j: usize, k: usize) -> Pt3 {
        self.origin + Vec3::new(i as f64, j as f64, k as f64) * self.edge
    }

    pub fn bounds(&self) -> Aabb {
        let max = self.origin + Vec3::new(self.nx as f64, self.ny as f64, self.nz as f64) * self.edge;
        Aabb { min: self.origin, max }
    }

    pub fn contains(&self, p: &Pt3) -> bool {
        let b = self.bounds();
        (0..3).all(|d| p[d] >= b.min[d] && p[d] <= b.max[d])
    }

    /// Voxel holding `p` plus the fractional position inside it. Points on
    /// the max faces belong to the last voxel. The caller guarantees `p` is
    /// inside (or within rounding of) the box.
    #[inline]
    pub(crate) fn locate(&self, p: &Pt3) -> ([usize; 3], [f64; 3]) {
        let n = [self.nx, self.ny, self.nz];
        let mut cell = [0usize; 3];
        let mut frac = [0.0f64; 3];
        for d in 0..3 {
            let f = ((p[d] - self.origin[d]) / self.edge).clamp(0.0, n[d] as f64);
            let i = (f.floor() as usize).min(n[d] - 1);
            cell[d] = i;
            frac[d] = f - i as f64;
        }
        (cell, frac)
    }

    /// The eight key-point indices of a voxel, x-fastest corner order.
    #[inline]
    pub fn voxel_corners(&self, i: usize, j: usize, k: usize) -> [usize; 8] {
        let base = self.key_index(i, j, k);
        let sx = 1;
        let sy = self.nx + 1;
        let sz = (self.nx + 1) * (self.ny + 1);
        [
            base,
            base + sx,
            base + sy,
            base + sx + sy,
            base + sz,
            base + sx + sz,
            base + sy + sz,
            base + sx + sy + sz,
        ]
    }

    pub fn same_lattice(&self, other: &GridGeometry) -> bool {
        self == other
    }
}

/// Trilinear weights of the eight corners, matching [`GridGeometry::voxel_corners`].
#[inline]
pub(crate) fn trilinear_weights(frac: [f64; 3]) -> [f64; 8] {
    let [fx, fy, fz] = frac;
    let (gx, gy, gz) = (1.0 - fx, 1.0 - fy, 1.0 - fz);
    [
        gx * gy * gz,
        fx * gy * gz,
        gx * fy * gz,
        fx * fy * gz,
        gx * gy * fz,
        fx * gy * fz,
        gx * fy * fz,
        fx * fy * fz,
    ]
}

#[derive(Debug, Clone, PartialEq)]
pub struct VoxelGrid {
    pub geom: GridGeometry,
    pub values: Vec<f32>,
    pub channel: Channel,
}

impl VoxelGrid {
    pub fn filled(geom: GridGeometry, channel: Channel, value: f32) -> Self {
        VoxelGrid {
            geom,
            values: vec![value; geom.key_count()],
            channel,
        }
    }

    pub fn from_values(geom: GridGeometry, channel: Channel, values: Vec<f32>) -> Result<Self> {
        if values.len() != geom.key_count() {
            return Err(Error::Usage(format!(
                "{} values for a lattice of {} key points",
                values.len(),
                geom.key_count()
            )));
        }
        Ok(VoxelGrid { geom, values, channel })
    }

    pub fn from_fn(geom: GridGeometry, channel: Channel, mut f: impl FnMut(Pt3) -> f32) -> Self {
        let [kx, ky, kz] = geom.key_dims();
        let mut values = Vec::with_capacity(geom.key_count());
        for k in 0..kz {
            for j in 0..ky {
                for i in 0..kx {
                    values.push(f(geom.key_position(i, j, k)));
                }
            }
        }
        VoxelGrid { geom, values, channel }
    }

    #[inline]
    pub fn key(&self, i: usize, j: usize, k: usize) -> f32 {
        self.values[self.geom.key_index(i, j, k)]
    }

    /// Trilinear interpolation for rendering: negative key values (the
    /// outside-hull sentinel) read as zero.
    pub fn sample_trilinear(&self, p: &Pt3) -> Result<f64> {
        if !self.geom.contains(p) {
            return Err(Error::Domain(format!("point {p:?} outside grid box")));
        }
        Ok(self.sample_clamped(p))
    }

    /// Trilinear interpolation of the raw stored values.
    pub fn sample_raw(&self, p: &Pt3) -> Result<f64> {
        if !self.geom.contains(p) {
            return Err(Error::Domain(format!("point {p:?} outside grid box")));
        }
        let (c, frac) = self.geom.locate(p);
        let corners = self.geom.voxel_corners(c[0], c[1], c[2]);
        let w = trilinear_weights(frac);
        Ok((0..8).map(|n| w[n] * self.values[corners[n]] as f64).sum())
    }

    #[inline]
    pub(crate) fn sample_clamped(&self, p: &Pt3) -> f64 {
        let (c, frac) = self.geom.locate(p);
        self.sample_cell_clamped(c, frac)
    }

    #[inline]
    pub(crate) fn sample_cell_clamped(&self, c: [usize; 3], frac: [f64; 3]) -> f64 {
        let corners = self.geom.voxel_corners(c[0], c[1], c[2]);
        let w = trilinear_weights(frac);
        let mut acc = 0.0;
        for n in 0..8 {
            acc += w[n] * self.values[corners[n]].max(0.0) as f64;
        }
        acc
    }

    pub fn max_value(&self) -> f32 {
        self.values.iter().copied().fold(f32::NEG_INFINITY, f32::max)
    }
}

// ----- grid sizing ------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dimensions {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
    pub edge: f64,
}

impl Dimensions {
    pub fn geometry(&self, origin: Pt3) -> Result<GridGeometry> {
        GridGeometry::new(self.nx, self.ny, self.nz, origin, self.edge)
    }
}

/// The twelve box edges as corner-index pairs with the world axis they run along.
const BOX_EDGES: [(usize, usize, usize); 12] = [
    (0, 1, 0),
    (2, 3, 0),
    (4, 5, 0),
    (6, 7, 0),
    (0, 2, 1),
    (1, 3, 1),
    (4, 6, 1),
    (5, 7, 1),
    (0, 4, 2),
    (1, 5, 2),
    (2, 6, 2),
    (3, 7, 2),
];

/// Chooses voxel counts so that one voxel spans about `alpha` pixels in the
/// view where the box appears largest.
///
/// For every camera the eight box corners are projected; the largest pixel
/// extent (in u or v) of an edge running along world axis `d` gives
/// `n_max[d]`. The per-axis edge would be `alpha * l_d / n_max[d]`; the
/// smallest one is used for all axes so voxels stay cubic, and the counts are
/// recomputed from it.
pub fn determine_dimensions(cameras: &[Camera], bbox: &Aabb, alpha: f64) -> Result<Dimensions> {
    if cameras.is_empty() {
        return Err(Error::Usage("no cameras".into()));
    }
    if !(alpha > 0.0) {
        return Err(Error::Domain(format!("alpha {alpha} must be positive")));
    }
    let corners = bbox.corners();
    let mut n_max = [0.0f64; 3];
    for cam in cameras {
        let proj = corners.iter().map(|c| cam.project(c)).collect::<Result<Vec<_>>>()?;
        for &(a, b, d) in &BOX_EDGES {
            let extent = (proj[a].u - proj[b].u).abs().max((proj[a].v - proj[b].v).abs());
            n_max[d] = n_max[d].max(extent);
        }
    }
    let lengths = bbox.lengths();
    let mut edge = f64::INFINITY;
    for d in 0..3 {
        if n_max[d] <= 0.0 {
            return Err(Error::Domain("box edge projects to zero pixels".into()));
        }
        edge = edge.min(alpha * lengths[d] / n_max[d]);
    }
    let count = |d: usize| ((lengths[d] / edge).round() as usize).max(1);
    Ok(Dimensions {
        nx: count(0),
        ny: count(1),
        nz: count(2),
        edge,
    })
}

// ----- visual hull ------------------------------------------------------------

/// Per-voxel bitmask of the views whose flame pixels the voxel overlaps.
#[derive(Debug, Clone, PartialEq)]
pub struct HullTags {
    pub geom: GridGeometry,
    pub tags: Vec<u32>,
    pub n_views: usize,
    inside_keys: Vec<bool>,
}

impl HullTags {
    pub fn from_tags(geom: GridGeometry, tags: Vec<u32>, n_views: usize) -> Result<Self> {
        if n_views > 32 {
            return Err(Error::Usage(format!("{n_views} views exceed the 32-bit tag")));
        }
        if tags.len() != geom.voxel_count() {
            return Err(Error::Usage("tag count does not match voxel count".into()));
        }
        let full = full_mask(n_views);
        if tags.iter().any(|t| t & !full != 0) {
            return Err(Error::Usage("tag bits set above n_views".into()));
        }
        let mut inside_keys = vec![false; geom.key_count()];
        for (v, &t) in tags.iter().enumerate() {
            if n_views > 0 && t == full {
                let (i, j, k) = geom.voxel_coords(v);
                for c in geom.voxel_corners(i, j, k) {
                    inside_keys[c] = true;
                }
            }
        }
        Ok(HullTags {
            geom,
            tags,
            n_views,
            inside_keys,
        })
    }

    /// Every voxel inside; used when rendering ground-truth volumes.
    pub fn everything(geom: GridGeometry) -> Self {
        HullTags::from_tags(geom, vec![1; geom.voxel_count()], 1).expect("valid")
    }

    #[inline]
    pub fn hull_contains(&self, voxel: usize) -> bool {
        self.n_views > 0 && self.tags[voxel] == full_mask(self.n_views)
    }

    /// A key point belongs to the hull when any adjacent voxel does.
    #[inline]
    pub fn key_inside(&self, key: usize) -> bool {
        self.inside_keys[key]
    }

    pub fn inside_voxel_count(&self) -> usize {
        (0..self.tags.len()).filter(|&v| self.hull_contains(v)).count()
    }

    pub fn inside_key_count(&self) -> usize {
        self.inside_keys.iter().filter(|b| **b).count()
    }

    pub fn is_empty(&self) -> bool {
        self.inside_keys.iter().all(|b| !b)
    }
}

#[inline]
fn full_mask(n_views: usize) -> u32 {
    if n_views >= 32 {
        u32::MAX
    } else {
        (1u32 << n_views) - 1
    }
}

/// Summed-area table over a flame mask for O(1) rectangle queries.
struct MaskIntegral {
    width: usize,
    sums: Vec<u32>,
}

impl MaskIntegral {
    fn new(mask: &FlameMask) -> Self {
        let (w, h) = (mask.width as usize, mask.height as usize);
        let mut sums = vec![0u32; (w + 1) * (h + 1)];
        for y in 0..h {
            let mut row = 0u32;
            for x in 0..w {
                row += mask.bits[y * w + x] as u32;
                sums[(y + 1) * (w + 1) + x + 1] = sums[y * (w + 1) + x + 1] + row;
            }
        }
        MaskIntegral { width: w, sums }
    }

    /// Any set pixel in the inclusive rectangle.
    fn any(&self, x0: usize, y0: usize, x1: usize, y1: usize) -> bool {
        let s = |x: usize, y: usize| self.sums[y * (self.width + 1) + x];
        s(x1 + 1, y1 + 1) + s(x0, y0) > s(x0, y1 + 1) + s(x1 + 1, y0)
    }
}

/// Inclusive pixel range covered by a continuous interval `[lo, hi]`, clipped
/// to `0..n`. `None` when the interval lies outside the image.
#[inline]
pub(crate) fn pixel_span(lo: f64, hi: f64, n: u32) -> Option<(usize, usize)> {
    if hi < 0.0 || lo >= n as f64 {
        return None;
    }
    let a = lo.floor().max(0.0) as usize;
    let b = (hi.floor() as usize).min(n as usize - 1);
    Some((a, b))
}

/// Tags every voxel with the views in which its projected footprint (the
/// pixel bounding box of its eight projected corners) overlaps at least one
/// flame pixel. A voxel with a corner at or behind a camera is treated as
/// covering that whole image.
pub fn compute_visual_hull(geom: &GridGeometry, masks: &[FlameMask], cameras: &[Camera]) -> Result<HullTags> {
    if masks.len() != cameras.len() {
        return Err(Error::Usage(format!(
            "{} masks for {} cameras",
            masks.len(),
            cameras.len()
        )));
    }
    if masks.len() > 32 {
        return Err(Error::Usage("at most 32 views supported".into()));
    }
    for (i, (m, c)) in masks.iter().zip(cameras).enumerate() {
        if m.width != c.width || m.height != c.height {
            return Err(Error::Usage(format!("mask {i} size does not match its camera")));
        }
    }
    let mut tags = vec![0u32; geom.voxel_count()];
    let [kx, ky, _] = geom.key_dims();
    for (view, (mask, cam)) in masks.iter().zip(cameras).enumerate() {
        let integral = MaskIntegral::new(mask);
        // project every key point once; None marks points at/behind the camera
        let projected: Vec<Option<(f64, f64)>> = (0..geom.key_count())
            .into_par_iter()
            .map(|idx| {
                let (i, j, k) = geom.key_coords(idx);
                cam.project(&geom.key_position(i, j, k)).ok().map(|p| (p.u, p.v))
            })
            .collect();
        let bit = 1u32 << view;
        let plane = geom.nx * geom.ny;
        tags.par_chunks_mut(plane).enumerate().for_each(|(k, slab)| {
            for j in 0..geom.ny {
                for i in 0..geom.nx {
                    let base = (k * ky + j) * kx + i;
                    let corners = [
                        base,
                        base + 1,
                        base + kx,
                        base + kx + 1,
                        base + kx * ky,
                        base + kx * ky + 1,
                        base + kx * ky + kx,
                        base + kx * ky + kx + 1,
                    ];
                    let mut umin = f64::INFINITY;
                    let mut umax = f64::NEG_INFINITY;
                    let mut vmin = f64::INFINITY;
                    let mut vmax = f64::NEG_INFINITY;
                    let mut behind = false;
                    for c in corners {
                        match projected[c] {
                            Some((u, v)) => {
                                umin = umin.min(u);
                                umax = umax.max(u);
                                vmin = vmin.min(v);
                                vmax = vmax.max(v);
                            }
                            None => behind = true,
                        }
                    }
                    let hit = if behind {
                        !mask.is_empty()
                    } else {
                        match (pixel_span(umin, umax, mask.width), pixel_span(vmin, vmax, mask.height)) {
                            (Some((x0, x1)), Some((y0, y1))) => integral.any(x0, y0, x1, y1),
                            _ => false,
                        }
                    };
                    if hit {
                        slab[j * geom.nx + i] |= bit;
                    }
                }
            }
        });
    }
    HullTags::from_tags(*geom, tags, masks.len())
}

// ----- volume file ------------------------------------------------------------
//
// Little-endian: magic "FVR1"; u32 version = 1; u32 channel count C;
// u32 nx, ny, nz; f64 origin x, y, z (m); f64 edge (m); then C planes of f32
// key-point values, each (nx+1)(ny+1)(nz+1) long, x-fastest.

const FVR_MAGIC: &[u8; 4] = b"FVR1";
const FVR_HEADER: usize = 4 + 4 * 5 + 8 * 4;

pub fn encode_volume(grids: &[VoxelGrid]) -> Result<Vec<u8>> {
    let first = grids
        .first()
        .ok_or_else(|| Error::Usage("no channels to write".into()))?;
    let g = first.geom;
    if grids.iter().any(|v| v.geom != g) {
        return Err(Error::Usage("channels have different geometries".into()));
    }
    let mut out = Vec::with_capacity(FVR_HEADER + grids.len() * g.key_count() * 4);
    out.extend_from_slice(FVR_MAGIC);
    for v in [1u32, grids.len() as u32, g.nx as u32, g.ny as u32, g.nz as u32] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for v in [g.origin.x, g.origin.y, g.origin.z, g.edge] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for grid in grids {
        for v in &grid.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

/// Decodes a volume file into its geometry and raw channel planes; the file
/// carries no channel tags.
pub fn decode_volume(bytes: &[u8]) -> Result<(GridGeometry, Vec<Vec<f32>>)> {
    let ctx = "volume file";
    if bytes.len() < FVR_HEADER || &bytes[..4] != FVR_MAGIC {
        return Err(Error::format(ctx, "bad magic or truncated header"));
    }
    let u32_at = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
    let f64_at = |i: usize| f64::from_le_bytes(bytes[i..i + 8].try_into().unwrap());
    if u32_at(4) != 1 {
        return Err(Error::format(ctx, format!("unsupported version {}", u32_at(4))));
    }
    let channels = u32_at(8) as usize;
    let (nx, ny, nz) = (u32_at(12) as usize, u32_at(16) as usize, u32_at(20) as usize);
    let origin = Pt3::new(f64_at(24), f64_at(32), f64_at(40));
    let geom = GridGeometry::new(nx, ny, nz, origin, f64_at(48)).map_err(|e| Error::format(ctx, e.to_string()))?;
    let plane = geom.key_count();
    if bytes.len() != FVR_HEADER + channels * plane * 4 {
        return Err(Error::format(ctx, "payload length mismatch"));
    }
    let planes = bytes[FVR_HEADER..]
        .chunks_exact(plane * 4)
        .map(|p| {
            p.chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect()
        })
        .collect();
    Ok((geom, planes))
}

pub fn save_volume(path: impl AsRef<Path>, grids: &[VoxelGrid]) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_volume(grids)?).map_err(|e| Error::io(path, e))
}

/// Loads a volume and tags its planes: three planes are RGB, a single plane
/// takes `single` (green or temperature).
pub fn load_volume(path: impl AsRef<Path>, single: Channel) -> Result<Vec<VoxelGrid>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let (geom, planes) = decode_volume(&bytes)?;
    let tags: Vec<Channel> = match planes.len() {
        1 => vec![single],
        3 => Channel::RGB.to_vec(),
        n => return Err(Error::format("volume file", format!("{n} channels; expected 1 or 3"))),
    };
    planes
        .into_iter()
        .zip(tags)
        .map(|(values, ch)| VoxelGrid::from_values(geom, ch, values))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Matrix3;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn small_geom() -> GridGeometry {
        GridGeometry::new(4, 3, 2, Pt3::new(-0.1, 0.2, 0.0), 0.05).unwrap()
    }

    fn random_grid(geom: GridGeometry, seed: u64) -> VoxelGrid {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let values = (0..geom.key_count()).map(|_| rng.random_range(0.0..255.0)).collect();
        VoxelGrid::from_values(geom, Channel::Red, values).unwrap()
    }

    /// Weight of key point (i, j, k) at continuous lattice coordinate `f`,
    /// from the tent function, independent of the cell/corner decomposition.
    fn tent_oracle(grid: &VoxelGrid, p: &Pt3) -> f64 {
        let g = grid.geom;
        let f = (p - g.origin) / g.edge;
        let [kx, ky, kz] = g.key_dims();
        let mut acc = 0.0;
        for k in 0..kz {
            for j in 0..ky {
                for i in 0..kx {
                    let w = (1.0 - (f.x - i as f64).abs()).max(0.0)
                        * (1.0 - (f.y - j as f64).abs()).max(0.0)
                        * (1.0 - (f.z - k as f64).abs()).max(0.0);
                    acc += w * grid.key(i, j, k) as f64;
                }
            }
        }
        acc
    }

    #[test]
    fn key_point_and_cell_center() {
        let grid = random_grid(small_geom(), 1);
        let g = grid.geom;
        for (i, j, k) in [(0, 0, 0), (4, 3, 2), (2, 1, 1), (4, 0, 2)] {
            let v = grid.sample_trilinear(&g.key_position(i, j, k)).unwrap();
            assert!((v - grid.key(i, j, k) as f64).abs() < 1e-9);
        }
        let center = g.key_position(1, 1, 0) + Vec3::repeat(g.edge / 2.0);
        let mean: f64 = g
            .voxel_corners(1, 1, 0)
            .iter()
            .map(|&c| grid.values[c] as f64)
            .sum::<f64>()
            / 8.0;
        assert!((grid.sample_trilinear(&center).unwrap() - mean).abs() < 1e-9);
    }

    #[test]
    fn outside_point_is_error() {
        let grid = random_grid(small_geom(), 2);
        assert!(grid.sample_trilinear(&Pt3::new(10.0, 0.0, 0.0)).is_err());
    }

    #[test]
    fn sentinel_reads_as_zero() {
        let g = GridGeometry::new(1, 1, 1, Pt3::origin(), 1.0).unwrap();
        let grid = VoxelGrid::filled(g, Channel::Red, OUTSIDE_HULL);
        assert_eq!(grid.sample_trilinear(&Pt3::new(0.5, 0.5, 0.5)).unwrap(), 0.0);
        assert_eq!(grid.sample_raw(&Pt3::new(0.5, 0.5, 0.5)).unwrap(), -1.0);
    }

    #[test]
    fn linear_between_adjacent_key_points() {
        let grid = random_grid(small_geom(), 3);
        let g = grid.geom;
        let (a, b) = (g.key_position(1, 2, 1), g.key_position(2, 2, 1));
        let (va, vb) = (grid.key(1, 2, 1) as f64, grid.key(2, 2, 1) as f64);
        for s in 0..=10 {
            let t = s as f64 / 10.0;
            let v = grid.sample_trilinear(&(a + (b - a) * t)).unwrap();
            assert!((v - (va + (vb - va) * t)).abs() < 1e-9);
        }
    }

    proptest! {
        #[test]
        fn trilinear_matches_tent_oracle(seed in any::<u64>(), fx in 0.0f64..1.0, fy in 0.0f64..1.0, fz in 0.0f64..1.0) {
            let grid = random_grid(small_geom(), seed);
            let b = grid.geom.bounds();
            let p = b.min + (b.max - b.min).component_mul(&Vec3::new(fx, fy, fz));
            let v = grid.sample_trilinear(&p).unwrap();
            prop_assert!((v - tent_oracle(&grid, &p)).abs() < 1e-9);
        }
    }

    #[test]
    fn hull_contains_bits() {
        let g = GridGeometry::new(2, 1, 1, Pt3::origin(), 1.0).unwrap();
        let hull = HullTags::from_tags(g, vec![0b111, 0b101], 3).unwrap();
        assert!(hull.hull_contains(0));
        assert!(!hull.hull_contains(1));
        let zero = HullTags::from_tags(g, vec![0, 0], 3).unwrap();
        assert!(!zero.hull_contains(0) && zero.is_empty());
        assert!(HullTags::from_tags(g, vec![0b1000, 0], 3).is_err());
        // corner keys of voxel 0 are inside, the far face of voxel 1 is not
        assert!(hull.key_inside(g.key_index(0, 0, 0)));
        assert!(hull.key_inside(g.key_index(1, 1, 1)));
        assert!(!hull.key_inside(g.key_index(2, 0, 0)));
    }

    fn facing_camera(w: u32, h: u32, f: f64, dist: f64) -> Camera {
        Camera::new(
            f,
            f,
            w as f64 / 2.0,
            h as f64 / 2.0,
            Matrix3::identity(),
            Vec3::new(0.0, 0.0, dist),
            w,
            h,
        )
        .unwrap()
    }

    #[test]
    fn dimensions_from_face_extent() {
        // 0.2 m box with its front face at depth 1.0 spans exactly 300 px
        // (f * 0.2 / 1.0 = 300 => f = 1500); the back face is smaller.
        let bbox = Aabb::new(Pt3::new(-0.1, -0.1, 0.0), Pt3::new(0.1, 0.1, 0.2)).unwrap();
        let cam = facing_camera(1000, 1000, 1500.0, 1.0);
        // brute force: largest u/v extent per axis over all edges
        let proj: Vec<_> = bbox.corners().iter().map(|c| cam.project(c).unwrap()).collect();
        let x_extent = (proj[1].u - proj[0].u).abs();
        assert!((x_extent - 300.0).abs() < 1e-9);
        let dims = determine_dimensions(std::slice::from_ref(&cam), &bbox, DEFAULT_ALPHA).unwrap();
        assert_eq!((dims.nx, dims.ny), (200, 200));
        assert!((dims.edge - 0.001).abs() < 1e-15);
        // z edges recede from the camera and project short, but cubic voxels
        // reuse the smallest edge
        assert_eq!(dims.nz, 200);

        let doubled = determine_dimensions(&[cam], &bbox, 3.0).unwrap();
        assert_eq!((doubled.nx, doubled.ny, doubled.nz), (100, 100, 100));
    }

    #[test]
    fn dimensions_reject_box_behind_camera() {
        let bbox = Aabb::new(Pt3::new(-0.1, -0.1, -2.0), Pt3::new(0.1, 0.1, 0.2)).unwrap();
        let cam = facing_camera(1000, 1000, 1500.0, 1.0);
        assert!(matches!(
            determine_dimensions(&[cam], &bbox, 1.5),
            Err(Error::BehindCamera { .. })
        ));
    }

    #[test]
    fn dimensions_invariant_to_camera_order() {
        let bbox = Aabb::centered_cube(Pt3::origin(), 0.2).unwrap();
        let cams: Vec<Camera> = (0..5)
            .map(|i| {
                let a = i as f64 * 1.1;
                Camera::look_at(
                    Pt3::new(0.6 * a.cos(), 0.6 * a.sin(), 0.05 * i as f64),
                    Pt3::origin(),
                    Vec3::z(),
                    50.0,
                    640,
                    480,
                )
                .unwrap()
            })
            .collect();
        let d1 = determine_dimensions(&cams, &bbox, 1.5).unwrap();
        let mut rev = cams.clone();
        rev.reverse();
        rev.swap(1, 3);
        assert_eq!(d1, determine_dimensions(&rev, &bbox, 1.5).unwrap());
    }

    #[test]
    fn slab_intersection() {
        let b = Aabb::new(Pt3::origin(), Pt3::new(1.0, 1.0, 1.0)).unwrap();
        let (t0, t1) = b.intersect(&Pt3::new(-1.0, 0.5, 0.5), &Vec3::x()).unwrap();
        assert!((t0 - 1.0).abs() < 1e-12 && (t1 - 2.0).abs() < 1e-12);
        assert!(b.intersect(&Pt3::new(-1.0, 2.0, 0.5), &Vec3::x()).is_none());
        assert!(b.intersect(&Pt3::new(2.0, 0.5, 0.5), &Vec3::x()).is_none());
    }

    #[test]
    fn volume_file_round_trip() {
        let g = small_geom();
        let grids: Vec<VoxelGrid> = (0..3)
            .map(|c| {
                let mut v = random_grid(g, c as u64);
                v.channel = Channel::RGB[c];
                v
            })
            .collect();
        let bytes = encode_volume(&grids).unwrap();
        assert_eq!(&bytes[..4], b"FVR1");
        let (geom, planes) = decode_volume(&bytes).unwrap();
        assert_eq!(geom, g);
        for (p, grid) in planes.iter().zip(&grids) {
            assert_eq!(p, &grid.values);
        }
        assert!(decode_volume(&bytes[..bytes.len() - 1]).is_err());
    }

    #[test]
    fn hull_count_and_size_checks() {
        let g = small_geom();
        let cam = facing_camera(8, 8, 10.0, 1.0);
        let masks = vec![FlameMask::full(8, 8)];
        assert!(compute_visual_hull(&g, &masks, &[cam.clone(), cam.clone()]).is_err());
        assert!(compute_visual_hull(&g, &[FlameMask::full(4, 8)], &[cam]).is_err());
    }

    #[test]
    fn mask_integral_queries() {
        let mut m = FlameMask::new(5, 4);
        m.set(3, 2, true);
        let s = MaskIntegral::new(&m);
        assert!(s.any(0, 0, 4, 3));
        assert!(s.any(3, 2, 3, 2));
        assert!(!s.any(0, 0, 2, 3));
        assert!(!s.any(4, 0, 4, 3));
        assert!(!s.any(0, 3, 4, 3));
    }

    /// Per-voxel footprint test by scanning every pixel of the corner box.
    fn brute_force_hull(geom: &GridGeometry, masks: &[FlameMask], cams: &[Camera]) -> Vec<u32> {
        let mut tags = vec![0u32; geom.voxel_count()];
        for (view, (mask, cam)) in masks.iter().zip(cams).enumerate() {
            for (idx, tag) in tags.iter_mut().enumerate() {
                let (i, j, k) = geom.voxel_coords(idx);
                let mut pts = Vec::new();
                for c in geom.voxel_corners(i, j, k) {
                    let (a, b, d) = geom.key_coords(c);
                    pts.push(cam.project(&geom.key_position(a, b, d)).unwrap());
                }
                let umin = pts.iter().map(|p| p.u).fold(f64::INFINITY, f64::min);
                let umax = pts.iter().map(|p| p.u).fold(f64::NEG_INFINITY, f64::max);
                let vmin = pts.iter().map(|p| p.v).fold(f64::INFINITY, f64::min);
                let vmax = pts.iter().map(|p| p.v).fold(f64::NEG_INFINITY, f64::max);
                let mut hit = false;
                for y in 0..mask.height {
                    for x in 0..mask.width {
                        let overlaps =
                            (x as f64) <= umax && umin < (x + 1) as f64 && (y as f64) <= vmax && vmin < (y + 1) as f64;
                        hit |= overlaps && mask.get(x, y);
                    }
                }
                if hit {
                    *tag |= 1 << view;
                }
            }
        }
        tags
    }

    fn random_mask(rng: &mut ChaCha8Rng, w: u32, h: u32) -> FlameMask {
        let mut m = FlameMask::new(w, h);
        for _ in 0..rng.random_range(1..4) {
            let (cx, cy) = (rng.random_range(0.0..w as f64), rng.random_range(0.0..h as f64));
            let r = rng.random_range(2.0..w as f64 / 4.0);
            for y in 0..h {
                for x in 0..w {
                    if (x as f64 + 0.5 - cx).hypot(y as f64 + 0.5 - cy) < r {
                        m.set(x, y, true);
                    }
                }
            }
        }
        for _ in 0..20 {
            let (x, y) = (rng.random_range(0..w), rng.random_range(0..h));
            m.set(x, y, true);
        }
        m
    }

    #[test]
    fn hull_matches_brute_force_footprints() {
        let bbox = Aabb::centered_cube(Pt3::origin(), 0.2).unwrap();
        let geom = GridGeometry::cube(16, &bbox).unwrap();
        let cams: Vec<Camera> = (0..4)
            .map(|i| {
                let a = i as f64 * std::f64::consts::FRAC_PI_2 + 0.3;
                let eye = Pt3::new(0.5 * a.cos(), 0.5 * a.sin(), 0.1 * (i as f64 - 1.5));
                Camera::look_at(eye, Pt3::origin(), Vec3::z(), 40.0, 64, 48).unwrap()
            })
            .collect();
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let masks: Vec<FlameMask> = (0..4).map(|_| random_mask(&mut rng, 64, 48)).collect();
            let hull = compute_visual_hull(&geom, &masks, &cams).unwrap();
            assert_eq!(hull.tags, brute_force_hull(&geom, &masks, &cams), "seed {seed}");
        }
    }
}
