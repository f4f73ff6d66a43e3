//! CCD smear simulation and strobe-based shutter synchronization.
//!
//! A CCD frame is an acquisition phase followed by a read phase in which the
//! rows are shifted out one per `t_per_row`. A strobe flash during the read
//! phase deposits a bright dot in the source column, displaced from the
//! source by the number of rows already shifted. Dots above the source
//! belong to the frame being read; dots below it show up in the next frame.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Slack when rasterizing a flash instant to a row, so that instants lying
/// on a row boundary up to rounding land on the later row.
const ROW_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CcdTimingModel {
    pub n_rows: u32,
    pub t_per_row: f64,
    pub frame_rate: f64,
    pub t_acquire: f64,
    pub t_start_offset: f64,
}

impl Default for CcdTimingModel {
    fn default() -> Self {
        CcdTimingModel {
            n_rows: 720,
            t_per_row: 54e-6,
            frame_rate: 23.98,
            t_acquire: 2e-3,
            t_start_offset: 0.0,
        }
    }
}

impl CcdTimingModel {
    pub fn validate(&self) -> Result<()> {
        if self.n_rows == 0 {
            return Err(Error::Domain("a CCD needs at least one row".into()));
        }
        if !(self.t_per_row > 0.0 && self.frame_rate > 0.0 && self.t_acquire >= 0.0) {
            return Err(Error::Domain(
                "row time and frame rate must be positive, acquisition time non-negative".into(),
            ));
        }
        if !self.t_start_offset.is_finite() {
            return Err(Error::Domain("shutter offset must be finite".into()));
        }
        if self.t_read() + self.t_acquire > 1.0 / self.frame_rate * (1.0 + 1e-12) {
            return Err(Error::Domain(format!(
                "acquisition plus read ({:.6} s) exceeds the frame period ({:.6} s)",
                self.t_read() + self.t_acquire,
                1.0 / self.frame_rate
            )));
        }
        Ok(())
    }

    /// Time to shift out the whole image.
    pub fn t_read(&self) -> f64 {
        self.n_rows as f64 * self.t_per_row
    }

    pub fn read_start(&self, frame: i64) -> f64 {
        self.t_start_offset + frame as f64 / self.frame_rate + self.t_acquire
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StrobeConfig {
    pub f_flash: f64,
    /// Time of the first flash.
    pub phase: f64,
    pub light_row: u32,
}

impl Default for StrobeConfig {
    fn default() -> Self {
        StrobeConfig {
            f_flash: 23.98,
            phase: 15e-3,
            light_row: 360,
        }
    }
}

impl StrobeConfig {
    pub fn validate(&self, cam: &CcdTimingModel) -> Result<()> {
        if !(self.f_flash > 0.0 && self.f_flash.is_finite() && self.phase.is_finite()) {
            return Err(Error::Domain("flash rate must be positive and phase finite".into()));
        }
        if self.light_row >= cam.n_rows {
            return Err(Error::Domain(format!(
                "light row {} outside {} rows",
                self.light_row, cam.n_rows
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Above,
    Below,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SmearDot {
    pub row: u32,
    pub side: Side,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SmearPattern {
    pub light_row: u32,
    pub n_rows: u32,
    pub frame_rate: f64,
    pub f_flash: f64,
    /// Dots of each frame, sorted by row.
    pub frames: Vec<Vec<SmearDot>>,
}

impl SmearPattern {
    /// Row distance between a dot and the light source.
    pub fn distance(&self, dot: &SmearDot) -> u32 {
        dot.row.abs_diff(self.light_row)
    }
}

/// Dots recorded by `frames` consecutive frames starting at frame 0. The
/// camera is assumed to have run before, so frame 0 can hold below-source
/// dots from the read phase of frame −1.
pub fn simulate_smear(cam: &CcdTimingModel, strobe: &StrobeConfig, frames: usize) -> Result<SmearPattern> {
    cam.validate()?;
    strobe.validate(cam)?;
    if frames == 0 {
        return Err(Error::Domain("simulate at least one frame".into()));
    }
    let n = cam.n_rows;
    let mut out = vec![Vec::new(); frames];
    for i in -1..frames as i64 {
        let start = cam.read_start(i);
        let end = start + cam.t_read();
        let mut k = ((start - strobe.phase) * strobe.f_flash).ceil() - 1.0;
        loop {
            let t = strobe.phase + k / strobe.f_flash;
            k += 1.0;
            if t < start {
                continue;
            }
            if t >= end {
                break;
            }
            let shifted = (((t - start) / cam.t_per_row + ROW_EPS).floor() as u32).min(n - 1);
            if shifted <= strobe.light_row {
                if i >= 0 {
                    out[i as usize].push(SmearDot {
                        row: strobe.light_row - shifted,
                        side: Side::Above,
                    });
                }
            } else if i + 1 < frames as i64 {
                out[(i + 1) as usize].push(SmearDot {
                    row: strobe.light_row + (n - shifted),
                    side: Side::Below,
                });
            }
        }
    }
    for f in &mut out {
        f.sort_by_key(|d| d.row);
    }
    Ok(SmearPattern {
        light_row: strobe.light_row,
        n_rows: n,
        frame_rate: cam.frame_rate,
        f_flash: strobe.f_flash,
        frames: out,
    })
}

/// Row time from the spacing of adjacent same-side dots under a fast
/// strobe. Spacings are pooled over every frame and side.
pub fn estimate_t_per_row(pattern: &SmearPattern, f_flash: f64) -> Result<f64> {
    if !(f_flash > 0.0) {
        return Err(Error::Domain("flash rate must be positive".into()));
    }
    let (mut span, mut gaps) = (0u64, 0u64);
    for frame in &pattern.frames {
        for side in [Side::Above, Side::Below] {
            let rows: Vec<u32> = frame.iter().filter(|d| d.side == side).map(|d| d.row).collect();
            if rows.len() >= 2 {
                span += (rows[rows.len() - 1] - rows[0]) as u64;
                gaps += rows.len() as u64 - 1;
            }
        }
    }
    if gaps == 0 || span == 0 {
        return Err(Error::InsufficientData(
            "need two dots on the same side of the source in one frame".into(),
        ));
    }
    let spacing = span as f64 / gaps as f64;
    Ok(1.0 / (spacing * f_flash))
}

#[derive(Debug, Clone, PartialEq)]
pub struct OffsetEstimate {
    pub side: Side,
    /// Dot-to-source distance per camera, in rows.
    pub distances: Vec<u32>,
    /// Shutter offset of each camera relative to camera 0 (s).
    pub offsets: Vec<f64>,
    /// Largest pairwise offset (s).
    pub worst_error: f64,
    pub t_per_row: f64,
}

/// Relative shutter offsets from single-dot patterns taken with the strobe
/// running at the frame rate. Each camera contributes the first frame that
/// shows a dot.
pub fn estimate_offsets(patterns: &[SmearPattern], t_per_row: f64) -> Result<OffsetEstimate> {
    if patterns.is_empty() {
        return Err(Error::Usage("no smear patterns".into()));
    }
    if !(t_per_row > 0.0) {
        return Err(Error::Domain("row time must be positive".into()));
    }
    let mut side = None;
    let mut distances = Vec::with_capacity(patterns.len());
    for (c, p) in patterns.iter().enumerate() {
        if ((p.f_flash - p.frame_rate) / p.frame_rate).abs() > 1e-9 {
            return Err(Error::Protocol(format!(
                "camera {c}: flash rate {} differs from frame rate {}",
                p.f_flash, p.frame_rate
            )));
        }
        if let Some(f) = p.frames.iter().position(|f| f.len() > 1) {
            return Err(Error::Protocol(format!(
                "camera {c}: frame {f} shows more than one dot"
            )));
        }
        let dot = p
            .frames
            .iter()
            .find_map(|f| f.first())
            .ok_or(Error::FlashInAcquisition { camera: c })?;
        match side {
            None => side = Some(dot.side),
            Some(s) if s != dot.side => {
                return Err(Error::Protocol(format!("camera {c}: dots on both sides of the source")));
            }
            Some(_) => {}
        }
        distances.push(p.distance(dot));
    }
    let side = side.expect("at least one camera");
    // an above dot moves toward the source as the shutter starts later
    let sign = match side {
        Side::Above => -1.0,
        Side::Below => 1.0,
    };
    let d0 = distances[0] as f64;
    // adding zero folds -0.0 into 0.0
    let offsets: Vec<f64> = distances
        .iter()
        .map(|&d| sign * (d as f64 - d0) * t_per_row + 0.0)
        .collect();
    let max = offsets.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = offsets.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(OffsetEstimate {
        side,
        distances,
        offsets,
        worst_error: max - min,
        t_per_row,
    })
}

impl OffsetEstimate {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("camera,offset_s\n");
        for (c, o) in self.offsets.iter().enumerate() {
            let _ = writeln!(s, "{c},{o:.9}");
        }
        s
    }
}

/// Per-camera shutter delays (s); positive delays start a camera later.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ResetPlan {
    pub delays: Vec<(usize, f64)>,
}

impl ResetPlan {
    pub fn is_empty(&self) -> bool {
        self.delays.is_empty()
    }

    pub fn apply(&self, cams: &mut [CcdTimingModel]) {
        for &(c, d) in &self.delays {
            cams[c].t_start_offset += d;
        }
    }
}

/// Delays that move every camera onto the median offset. Cameras already
/// within half a row of it are left alone.
pub fn suggest_shutter_resets(est: &OffsetEstimate) -> ResetPlan {
    let mut sorted = est.offsets.clone();
    sorted.sort_by(f64::total_cmp);
    let Some(&median) = sorted.get((sorted.len().max(1) - 1) / 2) else {
        return ResetPlan::default();
    };
    let delays = est
        .offsets
        .iter()
        .enumerate()
        .map(|(c, &o)| (c, median - o))
        .filter(|(_, d)| d.abs() >= est.t_per_row / 2.0)
        .collect();
    ResetPlan { delays }
}

/// A multi-camera synchronization run: shared timing, one hidden shutter
/// offset per camera and an optional fast-strobe calibration pass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyncScenario {
    pub frames: usize,
    /// Flash rate of the calibration pass that measures the row time; none
    /// uses the model's row time directly.
    pub calibration_flash: Option<f64>,
    pub offsets: Vec<f64>,
    pub camera: CcdTimingModel,
    pub strobe: StrobeConfig,
}

impl Default for SyncScenario {
    fn default() -> Self {
        SyncScenario {
            frames: 3,
            calibration_flash: None,
            offsets: vec![0.0, 1.2e-3, -0.8e-3, 2.5e-3, 0.3e-3],
            camera: CcdTimingModel::default(),
            strobe: StrobeConfig::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyncReport {
    pub t_per_row: f64,
    pub before: OffsetEstimate,
    pub plan: ResetPlan,
    pub after: OffsetEstimate,
}

impl SyncScenario {
    pub fn parse(text: &str) -> Result<Self> {
        let s: SyncScenario = toml::from_str(text).map_err(|e| Error::format("sync scenario", e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        SyncScenario::parse(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario always serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.offsets.is_empty() {
            return Err(Error::Domain("scenario needs at least one camera offset".into()));
        }
        if self.frames == 0 {
            return Err(Error::Domain("scenario needs at least one frame".into()));
        }
        if matches!(self.calibration_flash, Some(f) if !(f > 0.0)) {
            return Err(Error::Domain("calibration flash rate must be positive".into()));
        }
        self.camera.validate()?;
        self.strobe.validate(&self.camera)
    }

    pub fn cameras(&self) -> Vec<CcdTimingModel> {
        self.offsets
            .iter()
            .map(|&o| CcdTimingModel {
                t_start_offset: self.camera.t_start_offset + o,
                ..self.camera
            })
            .collect()
    }

    /// Measures the row time, estimates the offsets, applies the suggested
    /// resets and measures again.
    pub fn run(&self) -> Result<SyncReport> {
        self.validate()?;
        let t_per_row = match self.calibration_flash {
            Some(f) => {
                let strobe = StrobeConfig {
                    f_flash: f,
                    ..self.strobe
                };
                estimate_t_per_row(&simulate_smear(&self.camera, &strobe, self.frames)?, f)?
            }
            None => self.camera.t_per_row,
        };
        let measure = |cams: &[CcdTimingModel]| -> Result<OffsetEstimate> {
            let patterns = cams
                .iter()
                .map(|c| simulate_smear(c, &self.strobe, self.frames))
                .collect::<Result<Vec<_>>>()?;
            estimate_offsets(&patterns, t_per_row)
        };
        let mut cams = self.cameras();
        let before = measure(&cams)?;
        let plan = suggest_shutter_resets(&before);
        plan.apply(&mut cams);
        let after = measure(&cams)?;
        Ok(SyncReport {
            t_per_row,
            before,
            plan,
            after,
        })
    }
}
