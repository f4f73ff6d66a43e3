use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};

use flamevol_core::experiment::{run_experiment, SyntheticCase};
use flamevol_core::geometry::save_cameras;
use flamevol_core::image::{read_image, write_fim, write_pbm, write_ppm};
use flamevol_core::preprocess::{bounding_box, threshold_mask};
use flamevol_core::reconstruct::{
    reconstruct_channel, reconstruct_color, reconstruct_temperature, rmse_pixels, IterationTrace, Observations,
    RunOptions, Snapshot,
};
use flamevol_core::render::render_view;
use flamevol_core::syncsim::SyncScenario;
use flamevol_core::volume::{load_volume, save_volume, OUTSIDE_HULL};
use flamevol_core::{Channel, Error, Image, Rect, VoxelGrid};

use crate::{Command, Mode, SceneArgs, SnapshotArgs};

/// Runs one command. `Ok(false)` means an acceptance check failed.
pub fn run(cmd: Command) -> Result<bool> {
    match cmd {
        Command::Synth { scene, out_dir } => synth(&scene, &out_dir),
        Command::Render { scene, volume, out_dir } => render(&scene, &volume, &out_dir),
        Command::Hull {
            scene,
            images,
            out,
            masks_dir,
        } => hull(&scene, &images, &out, masks_dir.as_deref()),
        Command::Reconstruct {
            scene,
            images,
            mode,
            out,
            trace,
            truth,
            snapshots,
        } => reconstruct(
            &scene,
            &images,
            mode,
            &out,
            trace.as_deref(),
            truth.as_deref(),
            &snapshots,
        ),
        Command::TempMap { scene, csv, green, out } => {
            temp_map(&scene, csv.as_deref(), green.as_deref(), out.as_deref())
        }
        Command::Metrics { scene, a, b, bbox } => metrics(&scene, &a, &b, bbox.as_deref()),
        Command::SyncSim {
            scenario,
            out,
            print_default,
        } => sync_sim(scenario.as_deref(), out.as_deref(), print_default),
        Command::Experiment {
            name,
            scene,
            out_dir,
            check,
            snapshots,
        } => {
            let scene = scene.resolve_synthetic()?;
            create_dir(&out_dir)?;
            let mut writer = SnapshotWriter::new(&snapshots)?;
            let rep = run_experiment(name, &scene, &mut |s| writer.observe(s))?;
            writer.finish()?;
            for (file, text) in &rep.tables {
                write_text(&out_dir.join(file), text)?;
            }
            for (file, img) in &rep.images {
                write_ppm(out_dir.join(file), img)?;
            }
            write_text(&out_dir.join("summary.txt"), &rep.summary)?;
            print!("{}", rep.summary);
            Ok(!check || rep.passed())
        }
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })?;
    Ok(())
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    Ok(())
}

fn load_images(paths: &[PathBuf]) -> Result<Vec<Image>> {
    paths
        .iter()
        .map(|p| read_image(p).with_context(|| format!("reading {}", p.display())))
        .collect()
}

fn observations(scene: &flamevol_core::scene::SceneConfig, images: &[PathBuf], gray: bool) -> Result<Observations> {
    let cameras = scene.cameras()?;
    let mut frames = load_images(images)?;
    if frames.len() != cameras.len() {
        return Err(Error::Usage(format!("{} images for {} cameras", frames.len(), cameras.len())).into());
    }
    if gray {
        frames = frames.iter().map(|f| f.channel(0)).collect();
    }
    Ok(Observations::from_frames(
        cameras,
        &frames,
        scene.preprocess.threshold,
        scene.preprocess.dilate,
    )?)
}

struct SnapshotWriter {
    dir: Option<PathBuf>,
    every: u64,
    error: Option<Error>,
}

impl SnapshotWriter {
    fn new(args: &SnapshotArgs) -> Result<Self> {
        if let Some(d) = &args.snapshots {
            create_dir(d)?;
        }
        Ok(SnapshotWriter {
            dir: args.snapshots.clone(),
            every: args.snapshot_every,
            error: None,
        })
    }

    fn observe(&mut self, s: &Snapshot<'_>) {
        let Some(dir) = &self.dir else { return };
        if self.error.is_some() || !(s.iteration as u64).is_multiple_of(self.every) {
            return;
        }
        for (v, img) in s.renders.iter().enumerate() {
            if let Err(e) = write_ppm(dir.join(format!("iter{:04}_view{v:02}.ppm", s.iteration)), img) {
                self.error = Some(e);
                return;
            }
        }
    }

    fn finish(self) -> Result<()> {
        match self.error {
            Some(e) => Err(e.into()),
            None => Ok(()),
        }
    }
}

fn synth(args: &SceneArgs, out: &Path) -> Result<bool> {
    let scene = args.resolve()?;
    let case = SyntheticCase::build(&scene, scene.volume.kind, scene.cameras()?)?;
    create_dir(out)?;
    save_volume(out.join("volume.fvr"), &case.truth)?;
    if let Some(t) = &case.temperature {
        save_volume(out.join("temperature.fvr"), std::slice::from_ref(t))?;
    }
    save_cameras(out.join("cameras.toml"), &case.cameras)?;
    for (v, f) in case.frames.iter().enumerate() {
        write_ppm(out.join(format!("view{v:02}.ppm")), f)?;
        write_fim(out.join(format!("view{v:02}.fim")), f)?;
    }
    write_text(&out.join("scene.toml"), &scene.to_toml())?;
    let g = case.geom;
    println!(
        "{} volume {}x{}x{} (edge {:.5} m), {} views of {}x{}",
        format!("{:?}", scene.volume.kind).to_lowercase(),
        g.nx,
        g.ny,
        g.nz,
        g.edge,
        case.cameras.len(),
        scene.cameras.width,
        scene.cameras.height
    );
    Ok(true)
}

fn render(args: &SceneArgs, volume: &Path, out: &Path) -> Result<bool> {
    let scene = args.resolve()?;
    let grids = load_volume(volume, Channel::Green)?;
    let cfg = scene.render_config();
    create_dir(out)?;
    for (v, cam) in scene.cameras()?.iter().enumerate() {
        let img = render_view(cam, &grids, None, &cfg)?;
        write_ppm(out.join(format!("view{v:02}.ppm")), &img)?;
        write_fim(out.join(format!("view{v:02}.fim")), &img)?;
    }
    Ok(true)
}

fn hull(args: &SceneArgs, images: &[PathBuf], out: &Path, masks_dir: Option<&Path>) -> Result<bool> {
    let scene = args.resolve()?;
    let obs = observations(&scene, images, false)?;
    let geom = scene.geometry(&obs.cameras)?;
    let hull = obs.visual_hull(&geom)?;
    let values = (0..geom.key_count())
        .map(|k| if hull.key_inside(k) { 1.0 } else { OUTSIDE_HULL })
        .collect();
    save_volume(out, &[VoxelGrid::from_values(geom, Channel::Green, values)?])?;
    if let Some(dir) = masks_dir {
        create_dir(dir)?;
        for (v, m) in obs.masks.iter().enumerate() {
            write_pbm(dir.join(format!("mask{v:02}.pbm")), m)?;
        }
    }
    println!(
        "hull: {} of {} voxels, {} key points; bbox {:?}",
        hull.inside_voxel_count(),
        geom.voxel_count(),
        hull.inside_key_count(),
        obs.bbox
    );
    Ok(true)
}

fn reconstruct(
    args: &SceneArgs,
    images: &[PathBuf],
    mode: Mode,
    out: &Path,
    trace_path: Option<&Path>,
    truth: Option<&Path>,
    snapshots: &SnapshotArgs,
) -> Result<bool> {
    let scene = args.resolve()?;
    let obs = observations(&scene, images, mode == Mode::Gray)?;
    let geom = scene.geometry(&obs.cameras)?;
    let cfg = scene.reconstruction_config();
    let opts = RunOptions {
        init: None,
        truth: truth.map(|p| load_volume(p, Channel::Green)).transpose()?,
    };
    let mut writer = SnapshotWriter::new(snapshots)?;
    let mut observer = |s: &Snapshot<'_>| writer.observe(s);
    let trace = match mode {
        Mode::Color => {
            let r = reconstruct_color(&obs, &geom, &cfg, &opts, &mut observer)?;
            save_volume(out, &r.grids)?;
            r.trace
        }
        Mode::Gray => {
            let hull = obs.visual_hull(&geom)?;
            let (grid, t) = reconstruct_channel(&obs, &hull, Channel::Green, &cfg, &opts, &mut observer)?;
            save_volume(out, &[grid])?;
            IterationTrace { channels: vec![t] }
        }
        Mode::Temperature => {
            let map = scene.color_map()?;
            let r = reconstruct_temperature(&obs, &geom, &map, &cfg, &opts, &mut observer)?;
            save_volume(out, std::slice::from_ref(&r.temperature))?;
            println!("clamped key points: {}", r.clamped);
            IterationTrace {
                channels: vec![r.trace],
            }
        }
    };
    writer.finish()?;
    if let Some(p) = trace_path {
        write_text(p, &trace.to_csv())?;
    }
    for t in &trace.channels {
        println!(
            "{:?}: rmse {:.4} -> {:.4} after {} passes{}",
            t.channel,
            t.first_rmse(),
            t.final_rmse(),
            t.passes(),
            if t.converged { " (converged)" } else { "" }
        );
    }
    Ok(true)
}

fn temp_map(args: &SceneArgs, csv: Option<&Path>, green: Option<&Path>, out: Option<&Path>) -> Result<bool> {
    let scene = args.resolve()?;
    let map = scene.color_map()?;
    if let Some(p) = csv {
        write_text(p, &map.to_csv())?;
    }
    if let (Some(g), Some(o)) = (green, out) {
        let grids = load_volume(g, Channel::Green)?;
        ensure!(
            grids.len() == 1,
            Error::Usage("green volume must have one channel".into())
        );
        let mut clamped = 0usize;
        let values = grids[0]
            .values
            .iter()
            .map(|&v| {
                if v < 0.0 {
                    return OUTSIDE_HULL;
                }
                let l = map.temp_from_green(v as f64);
                clamped += l.clamped as usize;
                l.kelvin as f32
            })
            .collect();
        save_volume(
            o,
            &[VoxelGrid::from_values(grids[0].geom, Channel::Temperature, values)?],
        )?;
        println!("clamped key points: {clamped}");
    }
    println!(
        "map {} K to {} K, {} entries, green {:.3} to {:.3}",
        map.t_min,
        map.t_max,
        map.len(),
        map.green_min(),
        map.green_max()
    );
    Ok(true)
}

fn parse_bbox(s: &str) -> Result<Rect> {
    let v: Vec<u32> = s
        .split(',')
        .map(|p| p.trim().parse::<u32>())
        .collect::<Result<_, _>>()
        .map_err(|_| Error::Usage(format!("bad box '{s}'; expected x0,y0,x1,y1")))?;
    if v.len() != 4 || v[0] > v[2] || v[1] > v[3] {
        bail!(Error::Usage(format!("bad box '{s}'; expected x0,y0,x1,y1")));
    }
    Ok(Rect {
        x0: v[0],
        y0: v[1],
        x1: v[2],
        y1: v[3],
    })
}

fn is_volume(path: &Path) -> Result<bool> {
    let bytes = fs::read(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    Ok(bytes.starts_with(b"FVR1"))
}

fn metrics(args: &SceneArgs, a: &Path, b: &Path, bbox: Option<&str>) -> Result<bool> {
    let scene = args.resolve()?;
    println!("channel,rmse");
    match (is_volume(a)?, is_volume(b)?) {
        (true, true) => {
            let (va, vb) = (load_volume(a, Channel::Green)?, load_volume(b, Channel::Green)?);
            ensure!(
                va.len() == vb.len() && va[0].geom.same_lattice(&vb[0].geom),
                Error::Usage("volumes differ in channels or lattice".into())
            );
            // key points outside the first volume's hull carry the sentinel
            for (c, (x, y)) in va.iter().zip(&vb).enumerate() {
                let (mut s, mut n) = (0.0f64, 0usize);
                for (p, q) in x.values.iter().zip(&y.values) {
                    if *p >= 0.0 {
                        s += (*p as f64 - q.max(0.0) as f64).powi(2);
                        n += 1;
                    }
                }
                ensure!(n > 0, Error::EmptyHull);
                println!("{c},{:.6}", (s / n as f64).sqrt());
            }
        }
        (false, false) => {
            let (ia, ib) = (read_image(a)?, read_image(b)?);
            let rect = match bbox {
                Some(s) => parse_bbox(s)?,
                None => {
                    let (mask, _) = threshold_mask(&ib, scene.preprocess.threshold);
                    bounding_box(&[mask], scene.preprocess.dilate)?
                }
            };
            for (c, r) in rmse_pixels(&ib, &ia, rect)?.iter().enumerate() {
                println!("{c},{r:.6}");
            }
        }
        _ => bail!(Error::Usage("compare two images or two volumes".into())),
    }
    Ok(true)
}

fn sync_sim(scenario: Option<&Path>, out: Option<&Path>, print_default: bool) -> Result<bool> {
    if print_default {
        print!("{}", SyncScenario::default().to_toml());
        return Ok(true);
    }
    let s = match scenario {
        Some(p) => SyncScenario::load(p)?,
        None => SyncScenario::default(),
    };
    let r = s.run()?;
    println!("row time: {:.3} us", r.t_per_row * 1e6);
    println!("dot side: {:?}", r.before.side);
    for (c, (d, o)) in r.before.distances.iter().zip(&r.before.offsets).enumerate() {
        println!("camera {c}: dot {d} rows from source, offset {:+.4} ms", o * 1e3);
    }
    println!(
        "worst offset: {:.4} ms (frame period {:.4} ms)",
        r.before.worst_error * 1e3,
        1e3 / s.camera.frame_rate
    );
    for (c, d) in &r.plan.delays {
        println!("reset camera {c}: delay {:+.4} ms", d * 1e3);
    }
    println!("worst offset after reset: {:.4} ms", r.after.worst_error * 1e3);
    if let Some(p) = out {
        write_text(p, &r.before.to_csv())?;
    }
    Ok(true)
}
