//! The four subcommands: odometry, evaluate, synth and ablate.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use odom_core::cloud::{prepare_sweep, PointCloud};
use odom_core::eval::{segment_errors_strided, DriftResult, Trajectory};
use odom_core::kitti::{encode_velodyne, format_poses, read_poses, read_velodyne};
use odom_core::solver::{run_sequence, write_pair_csv, SequenceResult, SolverConfig, SurfaceTerm};
use odom_core::synth::{constant_motion_poses, render_sequence};
use serde::Serialize;

use crate::config::{render_manifest, InputSource, RunConfig, Table};
use crate::error::CliError;
use crate::io::{ensure_dir, list_sweeps, motion_pose, read_scene, write_atomic};
use crate::svg::trajectory_overlay;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Sweeps prepared for the solver, plus ground truth when known.
struct LoadedInput {
    sweeps: Vec<Result<PointCloud, String>>,
    gt: Option<Trajectory>,
    provenance: Vec<(String, String)>,
}

fn load_input(cfg: &RunConfig) -> Result<LoadedInput, CliError> {
    let input = cfg
        .input
        .as_ref()
        .ok_or_else(|| CliError::config("no input: set input.sweeps or input.scene"))?;
    let mut provenance = vec![("odom".to_string(), VERSION.to_string())];
    let (sweeps, mut gt): (Vec<Result<PointCloud, String>>, Option<Trajectory>) = match input {
        InputSource::Sweeps(dir) => {
            let files = list_sweeps(dir)?;
            let sweeps = files
                .iter()
                .enumerate()
                .map(|(k, f)| {
                    read_velodyne(f, k as u64)
                        .map(|c| prepare_sweep(&c, &cfg.voxel_cell, cfg.normal_neighbors))
                        .map_err(|e| e.to_string())
                })
                .collect();
            (sweeps, None)
        }
        InputSource::Scene(path) => {
            let file = read_scene(path)?;
            let seq = file.sequence.ok_or_else(|| {
                CliError::config(format!("{}: a [sequence] table is required for odometry input", path.display()))
            })?;
            provenance.push(("scene.seed".to_string(), file.scene.seed.to_string()));
            let poses = constant_motion_poses(seq.frames, &seq.step());
            let sweeps = render_sequence(&file.scene, &poses)
                .iter()
                .map(|c| Ok(prepare_sweep(c, &cfg.voxel_cell, cfg.normal_neighbors)))
                .collect();
            (sweeps, Some(Trajectory::new(poses)))
        }
    };
    if let Some(path) = &cfg.gt {
        gt = Some(Trajectory::new(read_poses(path)?));
    }
    if let Some(g) = &gt {
        if g.len() != sweeps.len() {
            return Err(CliError::data(format!(
                "ground truth has {} poses but the input has {} sweeps",
                g.len(),
                sweeps.len()
            )));
        }
    }
    if sweeps.len() < 2 {
        return Err(CliError::data("odometry needs at least 2 sweeps"));
    }
    Ok(LoadedInput { sweeps, gt, provenance })
}

fn output_dir(cfg: &RunConfig) -> Result<PathBuf, CliError> {
    let dir = cfg.output.clone().ok_or_else(|| CliError::config("no output: set output.dir"))?;
    ensure_dir(&dir)?;
    Ok(dir)
}

fn check_finite(result: &SequenceResult) -> Result<(), CliError> {
    for (k, p) in result.trajectory.poses.iter().enumerate() {
        let finite = p.translation.iter().all(|v| v.is_finite()) && p.rotation.coords.iter().all(|v| v.is_finite());
        if !finite {
            return Err(CliError::numerical(format!("non-finite pose at frame {k}")));
        }
    }
    Ok(())
}

fn report_flags(result: &SequenceResult) {
    for rec in &result.pairs {
        let e = &rec.estimate;
        if e.flags.any() || rec.failure.is_some() {
            let mut why = e.flags.describe();
            if let Some(f) = &rec.failure {
                why = format!("{why} ({f})");
            }
            eprintln!("warning: pair ending at frame {}: {why}", rec.frame);
        }
    }
}

fn drift_csv(drift: &DriftResult) -> Result<String, CliError> {
    #[derive(Serialize)]
    struct Row<'a> {
        length: &'a str,
        segments: usize,
        t_rel_percent: f64,
        r_rel_deg_per_100m: f64,
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    let write = |w: &mut csv::Writer<Vec<u8>>, row: Row| w.serialize(row).map_err(|e| CliError::data(e.to_string()));
    for l in &drift.per_length {
        let length = format!("{:?}", l.length);
        write(&mut w, Row { length: &length, segments: l.segments, t_rel_percent: l.t_rel, r_rel_deg_per_100m: l.r_rel })?;
    }
    let total: usize = drift.per_length.iter().map(|l| l.segments).sum();
    write(&mut w, Row { length: "average", segments: total, t_rel_percent: drift.t_rel, r_rel_deg_per_100m: drift.r_rel })?;
    let bytes = w.into_inner().map_err(|e| CliError::data(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn drift_summary(drift: &DriftResult) -> String {
    if drift.is_empty() {
        return "no segment fits inside the trajectory: drift undefined\n".to_string();
    }
    let mut s = String::new();
    let _ = writeln!(s, "{:>10} {:>9} {:>12} {:>14}", "length_m", "segments", "t_rel_%", "r_rel_deg/100m");
    for l in &drift.per_length {
        let _ = writeln!(s, "{:>10.1} {:>9} {:>12.6} {:>14.6}", l.length, l.segments, l.t_rel, l.r_rel);
    }
    let _ = writeln!(s, "{:>10} {:>9} {:>12.6} {:>14.6}", "average", "", drift.t_rel, drift.r_rel);
    s
}

/// Mean translation (m) and rotation (deg) error of the frame-to-frame links.
pub fn link_errors(est: &Trajectory, gt: &Trajectory) -> (f64, f64) {
    let n = est.len().min(gt.len());
    if n < 2 {
        return (0.0, 0.0);
    }
    let (mut t, mut r) = (0.0, 0.0);
    for k in 1..n {
        let de = est.poses[k - 1].inverse().compose(&est.poses[k]);
        let dg = gt.poses[k - 1].inverse().compose(&gt.poses[k]);
        let e = de.inverse().compose(&dg);
        t += e.translation.norm();
        r += e.rotation_angle().to_degrees();
    }
    let m = (n - 1) as f64;
    (t / m, r / m)
}

pub fn cmd_odometry(table: &Table, cfg: &RunConfig) -> Result<(), CliError> {
    let out = output_dir(cfg)?;
    let input = load_input(cfg)?;
    let solver = cfg.effective_solver();
    let result = run_sequence(input.sweeps, &solver);
    report_flags(&result);
    check_finite(&result)?;

    write_atomic(&out.join("trajectory.txt"), format_poses(&result.trajectory.poses).as_bytes())?;
    let mut pairs = Vec::new();
    write_pair_csv(&mut pairs, &result.pairs)?;
    write_atomic(&out.join("pairs.csv"), &pairs)?;
    write_atomic(&out.join("manifest.txt"), render_manifest(table, &input.provenance).as_bytes())?;

    let flagged = result.pairs.iter().filter(|p| p.estimate.flags.any()).count();
    println!("estimated {} poses ({} pairs, {flagged} flagged) -> {}", result.trajectory.len(), result.pairs.len(), out.display());
    if let Some(gt) = &input.gt {
        write_atomic(&out.join("gt_poses.txt"), format_poses(&gt.poses).as_bytes())?;
        let (t, r) = link_errors(&result.trajectory, gt);
        let end = gt.poses.last().unwrap().inverse().compose(result.trajectory.poses.last().unwrap());
        println!("mean link error {t:.4} m, {r:.4} deg; final position error {:.4} m", end.translation.norm());
        let drift = segment_errors_strided(&result.trajectory, gt, &cfg.lengths, cfg.stride)?;
        write_atomic(&out.join("drift.csv"), drift_csv(&drift)?.as_bytes())?;
        print!("{}", drift_summary(&drift));
    }
    Ok(())
}

pub fn cmd_evaluate(est_path: &Path, gt_path: &Path, out: Option<&Path>, cfg: &RunConfig) -> Result<DriftResult, CliError> {
    let est = Trajectory::new(read_poses(est_path)?);
    let gt = Trajectory::new(read_poses(gt_path)?);
    if est.len() != gt.len() {
        return Err(CliError::data(format!(
            "{} has {} poses but {} has {}",
            est_path.display(),
            est.len(),
            gt_path.display(),
            gt.len()
        )));
    }
    let drift = segment_errors_strided(&est, &gt, &cfg.lengths, cfg.stride)?;
    let summary = drift_summary(&drift);
    print!("{summary}");
    if let Some(dir) = out {
        ensure_dir(dir)?;
        write_atomic(&dir.join("drift.csv"), drift_csv(&drift)?.as_bytes())?;
        write_atomic(&dir.join("summary.txt"), summary.as_bytes())?;
        write_atomic(&dir.join("trajectory.svg"), trajectory_overlay(&est, &gt).as_bytes())?;
    }
    Ok(drift)
}

pub struct SynthRequest {
    pub spec: PathBuf,
    pub frames: Option<usize>,
    pub motion: Option<[f64; 6]>,
    pub out: PathBuf,
}

pub fn cmd_synth(req: &SynthRequest) -> Result<(), CliError> {
    let file = read_scene(&req.spec)?;
    let frames = req
        .frames
        .or(file.sequence.as_ref().map(|s| s.frames))
        .ok_or_else(|| CliError::config("frames: give --frames or a [sequence] table"))?;
    if frames == 0 {
        return Err(CliError::config("frames: must be >= 1"));
    }
    let step = match (&req.motion, &file.sequence) {
        (Some(m), _) => motion_pose(m),
        (None, Some(s)) => s.step(),
        (None, None) => return Err(CliError::config("motion: give --motion or a [sequence] table")),
    };
    let poses = constant_motion_poses(frames, &step);
    let sweeps = render_sequence(&file.scene, &poses);
    let velodyne = req.out.join("velodyne");
    ensure_dir(&velodyne)?;
    for (k, cloud) in sweeps.iter().enumerate() {
        write_atomic(&velodyne.join(format!("{k:06}.bin")), &encode_velodyne(cloud))?;
    }
    write_atomic(&req.out.join("poses.txt"), format_poses(&poses).as_bytes())?;
    println!("wrote {frames} sweeps and poses.txt to {}", req.out.display());
    Ok(())
}

/// Loss-subset variants in the row order of the ablation table.
pub fn ablation_variants(base: &RunConfig) -> Vec<(&'static str, RunConfig)> {
    let with = |f: &dyn Fn(&mut RunConfig)| {
        let mut c = base.clone();
        c.ablation = Default::default();
        f(&mut c);
        c
    };
    vec![
        ("L_sr", with(&|c| {
            c.ablation.enable_l_ra = false;
            c.ablation.enable_l_tr = false;
            c.ablation.enable_l_fs = false;
        })),
        ("L_sr+L_ra", with(&|c| {
            c.ablation.enable_l_tr = false;
            c.ablation.enable_l_fs = false;
        })),
        ("L_sr+L_ra+L_tr", with(&|c| c.ablation.enable_l_fs = false)),
        ("full", with(&|_| {})),
        ("full w/o conf", with(&|c| c.ablation.use_confidence = false)),
        ("L_eu+L_ra+L_tr+L_fs", with(&|c| c.ablation.surface_term = SurfaceTerm::Euclidean)),
    ]
}

#[derive(Debug, Clone, Serialize)]
pub struct AblationRow {
    pub variant: String,
    pub t_rel_percent: f64,
    pub r_rel_deg_per_100m: f64,
    pub mean_link_t_err_m: f64,
    pub mean_link_r_err_deg: f64,
    pub flagged_pairs: usize,
}

/// Runs every variant on already loaded sweeps against ground truth.
pub fn run_ablation(
    sweeps: &[Result<PointCloud, String>],
    gt: &Trajectory,
    base: &RunConfig,
) -> Result<Vec<AblationRow>, CliError> {
    let mut rows = Vec::new();
    for (name, cfg) in ablation_variants(base) {
        let solver: SolverConfig = cfg.effective_solver();
        let result = run_sequence(sweeps.iter().cloned(), &solver);
        check_finite(&result)?;
        let drift = segment_errors_strided(&result.trajectory, gt, &cfg.lengths, cfg.stride)?;
        let (t, r) = link_errors(&result.trajectory, gt);
        rows.push(AblationRow {
            variant: name.to_string(),
            t_rel_percent: drift.t_rel,
            r_rel_deg_per_100m: drift.r_rel,
            mean_link_t_err_m: t,
            mean_link_r_err_deg: r,
            flagged_pairs: result.pairs.iter().filter(|p| p.estimate.flags.any()).count(),
        });
    }
    Ok(rows)
}

pub fn cmd_ablate(table: &Table, cfg: &RunConfig) -> Result<Vec<AblationRow>, CliError> {
    let out = output_dir(cfg)?;
    let input = load_input(cfg)?;
    let gt = input
        .gt
        .clone()
        .ok_or_else(|| CliError::config("ablation needs ground truth: use input.scene or set input.gt"))?;
    let rows = run_ablation(&input.sweeps, &gt, cfg)?;

    let mut w = csv::Writer::from_writer(Vec::new());
    for row in &rows {
        w.serialize(row).map_err(|e| CliError::data(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::data(e.to_string()))?;
    write_atomic(&out.join("ablation.csv"), &bytes)?;
    write_atomic(&out.join("manifest.txt"), render_manifest(table, &input.provenance).as_bytes())?;

    println!("{:<22} {:>10} {:>14} {:>12} {:>12}", "variant", "t_rel_%", "r_rel_deg/100m", "link_t_m", "link_r_deg");
    for r in &rows {
        println!(
            "{:<22} {:>10.4} {:>14.4} {:>12.5} {:>12.5}",
            r.variant, r.t_rel_percent, r.r_rel_deg_per_100m, r.mean_link_t_err_m, r.mean_link_r_err_deg
        );
    }
    Ok(rows)
}
