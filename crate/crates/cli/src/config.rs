//! Run configuration as flat `key = value` text with dotted keys.
//!
//! Values resolve in layers: built-in defaults, then a config file, then
//! environment variables (`ODOM_` + key with `.` → `__`, upper-cased), then
//! `--set key=value` arguments. The fully resolved table is what the run
//! manifest records, so a manifest is itself a valid config file.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use nalgebra::Vector3;
use odom_core::cloud::{DEFAULT_CELL, DEFAULT_NORMAL_NEIGHBORS};
use odom_core::eval::DEFAULT_LENGTHS;
use odom_core::icp::IcpConfig;
use odom_core::losses::LossWeights;
use odom_core::solver::{InitMode, SolverConfig, SurfaceTerm};

use crate::error::CliError;

pub const ENV_PREFIX: &str = "ODOM_";

/// Every recognized key with a one-line description.
pub const KEYS: &[(&str, &str)] = &[
    ("input.sweeps", "directory of velodyne .bin sweeps (exclusive with input.scene)"),
    ("input.scene", "synthetic scene spec, TOML (exclusive with input.sweeps)"),
    ("input.gt", "ground-truth KITTI pose file for a sweep directory"),
    ("output.dir", "directory receiving all artifacts"),
    ("cloud.voxel_cell", "voxel cell size x,y,z in meters; 0,0,0 disables"),
    ("cloud.normal_neighbors", "neighbors used for normal estimation"),
    ("eval.lengths", "segment lengths in meters"),
    ("eval.stride", "start-frame stride for segment evaluation"),
    ("solver.max_outer_iterations", "outer iteration cap per pair"),
    ("solver.step_size", "initial step multiplier"),
    ("solver.convergence_tol", "composite-loss change that ends a pair"),
    ("solver.max_backtracks", "step halvings before a pair is declared stationary"),
    ("solver.log_variance_bound", "clamp on the uncertainty parameters"),
    ("solver.init_mode", "identity | constant_velocity"),
    ("loss.w1", "surface term weight"),
    ("loss.w2", "range alignment weight"),
    ("loss.w3", "transformation residual weight"),
    ("loss.w4", "flow supervision weight"),
    ("loss.gamma", "confidence regularizer weight"),
    ("loss.flow_layer_weights", "per-layer flow weights"),
    ("icp.max_iterations", "ICP iteration cap"),
    ("icp.translation_tol", "ICP translation update tolerance, meters"),
    ("icp.rotation_tol", "ICP rotation update tolerance, radians"),
    ("icp.epsilon", "additive ICP weight floor"),
    ("icp.max_dist", "correspondence gate, meters"),
    ("ablation.use_confidence", "weight correspondences by confidence"),
    ("ablation.surface_term", "spherical | euclidean"),
    ("ablation.enable_l_ra", "include range alignment"),
    ("ablation.enable_l_tr", "include transformation residual"),
    ("ablation.enable_l_fs", "include flow supervision"),
];

#[derive(Debug, Clone, PartialEq)]
pub enum InputSource {
    Sweeps(PathBuf),
    Scene(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ablation {
    pub use_confidence: bool,
    pub surface_term: SurfaceTerm,
    pub enable_l_ra: bool,
    pub enable_l_tr: bool,
    pub enable_l_fs: bool,
}

impl Default for Ablation {
    fn default() -> Self {
        Self {
            use_confidence: true,
            surface_term: SurfaceTerm::Spherical,
            enable_l_ra: true,
            enable_l_tr: true,
            enable_l_fs: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub input: Option<InputSource>,
    pub gt: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub voxel_cell: Vector3<f64>,
    pub normal_neighbors: usize,
    pub lengths: Vec<f64>,
    pub stride: usize,
    /// Solver settings before ablation switches are applied.
    pub solver: SolverConfig,
    pub ablation: Ablation,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            input: None,
            gt: None,
            output: None,
            voxel_cell: Vector3::from(DEFAULT_CELL),
            normal_neighbors: DEFAULT_NORMAL_NEIGHBORS,
            lengths: DEFAULT_LENGTHS.to_vec(),
            stride: 1,
            solver: SolverConfig::default(),
            ablation: Ablation::default(),
        }
    }
}

impl RunConfig {
    /// The solver configuration with ablation switches applied.
    pub fn effective_solver(&self) -> SolverConfig {
        let mut cfg = self.solver.clone();
        let a = &self.ablation;
        cfg.use_confidence = a.use_confidence;
        cfg.surface_term = a.surface_term;
        if !a.enable_l_ra {
            cfg.weights.w2 = 0.0;
        }
        if !a.enable_l_tr {
            cfg.weights.w3 = 0.0;
        }
        if !a.enable_l_fs {
            cfg.weights.w4 = 0.0;
        }
        cfg
    }
}

fn fmt_f64(v: f64) -> String {
    // shortest representation that parses back to the same value
    format!("{v:?}")
}

fn fmt_list(values: &[f64]) -> String {
    values.iter().map(|v| fmt_f64(*v)).collect::<Vec<_>>().join(",")
}

fn fmt_path(p: &Option<PathBuf>) -> String {
    p.as_ref().map(|p| p.display().to_string()).unwrap_or_default()
}

fn init_mode_name(m: InitMode) -> &'static str {
    match m {
        InitMode::Identity => "identity",
        InitMode::ConstantVelocity => "constant_velocity",
    }
}

fn surface_name(s: SurfaceTerm) -> &'static str {
    match s {
        SurfaceTerm::Spherical => "spherical",
        SurfaceTerm::Euclidean => "euclidean",
    }
}

/// Flat key-value view of a configuration.
pub type Table = BTreeMap<String, String>;

pub fn to_table(cfg: &RunConfig) -> Table {
    let (sweeps, scene) = match &cfg.input {
        Some(InputSource::Sweeps(p)) => (Some(p.clone()), None),
        Some(InputSource::Scene(p)) => (None, Some(p.clone())),
        None => (None, None),
    };
    let s = &cfg.solver;
    let w = &s.weights;
    let i = &s.icp;
    let a = &cfg.ablation;
    let entries: Vec<(&str, String)> = vec![
        ("input.sweeps", fmt_path(&sweeps)),
        ("input.scene", fmt_path(&scene)),
        ("input.gt", fmt_path(&cfg.gt)),
        ("output.dir", fmt_path(&cfg.output)),
        ("cloud.voxel_cell", fmt_list(cfg.voxel_cell.as_slice())),
        ("cloud.normal_neighbors", cfg.normal_neighbors.to_string()),
        ("eval.lengths", fmt_list(&cfg.lengths)),
        ("eval.stride", cfg.stride.to_string()),
        ("solver.max_outer_iterations", s.max_outer_iterations.to_string()),
        ("solver.step_size", fmt_f64(s.step_size)),
        ("solver.convergence_tol", fmt_f64(s.convergence_tol)),
        ("solver.max_backtracks", s.max_backtracks.to_string()),
        ("solver.log_variance_bound", fmt_f64(s.log_variance_bound)),
        ("solver.init_mode", init_mode_name(s.init_mode).to_string()),
        ("loss.w1", fmt_f64(w.w1)),
        ("loss.w2", fmt_f64(w.w2)),
        ("loss.w3", fmt_f64(w.w3)),
        ("loss.w4", fmt_f64(w.w4)),
        ("loss.gamma", fmt_f64(w.gamma)),
        ("loss.flow_layer_weights", fmt_list(&w.flow_layer_weights)),
        ("icp.max_iterations", i.max_iterations.to_string()),
        ("icp.translation_tol", fmt_f64(i.translation_tol)),
        ("icp.rotation_tol", fmt_f64(i.rotation_tol)),
        ("icp.epsilon", fmt_f64(i.epsilon)),
        ("icp.max_dist", fmt_f64(i.max_dist)),
        ("ablation.use_confidence", a.use_confidence.to_string()),
        ("ablation.surface_term", surface_name(a.surface_term).to_string()),
        ("ablation.enable_l_ra", a.enable_l_ra.to_string()),
        ("ablation.enable_l_tr", a.enable_l_tr.to_string()),
        ("ablation.enable_l_fs", a.enable_l_fs.to_string()),
    ];
    entries.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
}

fn is_known(key: &str) -> bool {
    KEYS.iter().any(|(k, _)| *k == key)
}

/// Parses `key = value` lines; `#` starts a comment line, blank lines are
/// ignored. Unknown keys are rejected.
pub fn parse_text(text: &str, origin: &str) -> Result<Table, CliError> {
    let mut table = Table::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            CliError::config(format!("{origin}:{}: expected `key = value`, got `{line}`", n + 1))
        })?;
        let key = key.trim();
        if !is_known(key) {
            return Err(CliError::config(format!("{origin}:{}: unknown key `{key}`", n + 1)));
        }
        table.insert(key.to_string(), value.trim().to_string());
    }
    Ok(table)
}

/// Environment name of a config key: `solver.step_size` → `ODOM_SOLVER__STEP_SIZE`.
pub fn env_name(key: &str) -> String {
    format!("{ENV_PREFIX}{}", key.replace('.', "__").to_uppercase())
}

pub fn env_overrides<I: IntoIterator<Item = (String, String)>>(vars: I) -> Table {
    let names: BTreeMap<String, &str> = KEYS.iter().map(|(k, _)| (env_name(k), *k)).collect();
    vars.into_iter()
        .filter_map(|(name, value)| names.get(&name).map(|k| (k.to_string(), value)))
        .collect()
}

pub fn parse_set(arg: &str) -> Result<(String, String), CliError> {
    let (k, v) = arg
        .split_once('=')
        .ok_or_else(|| CliError::config(format!("--set expects key=value, got `{arg}`")))?;
    let k = k.trim();
    if !is_known(k) {
        return Err(CliError::config(format!("--set: unknown key `{k}`")));
    }
    Ok((k.to_string(), v.trim().to_string()))
}

fn bad(key: &str, value: &str, expected: &str) -> CliError {
    CliError::config(format!("{key}: expected {expected}, got `{value}`"))
}

fn get_f64(t: &Table, key: &str) -> Result<f64, CliError> {
    let v = &t[key];
    v.parse::<f64>().ok().filter(|x| x.is_finite()).ok_or_else(|| bad(key, v, "a finite number"))
}

fn get_usize(t: &Table, key: &str) -> Result<usize, CliError> {
    let v = &t[key];
    v.parse::<usize>().map_err(|_| bad(key, v, "a non-negative integer"))
}

fn get_bool(t: &Table, key: &str) -> Result<bool, CliError> {
    let v = &t[key];
    v.parse::<bool>().map_err(|_| bad(key, v, "true or false"))
}

fn get_list(t: &Table, key: &str) -> Result<Vec<f64>, CliError> {
    let v = &t[key];
    if v.is_empty() {
        return Ok(Vec::new());
    }
    v.split(',')
        .map(|s| s.trim().parse::<f64>().ok().filter(|x| x.is_finite()))
        .collect::<Option<Vec<_>>>()
        .ok_or_else(|| bad(key, v, "a comma-separated list of numbers"))
}

fn get_path(t: &Table, key: &str) -> Option<PathBuf> {
    let v = &t[key];
    (!v.is_empty()).then(|| PathBuf::from(v))
}

/// Builds a typed configuration from a resolved table (which must contain
/// every key, as produced by [`resolve`]).
pub fn from_table(t: &Table) -> Result<RunConfig, CliError> {
    let sweeps = get_path(t, "input.sweeps");
    let scene = get_path(t, "input.scene");
    let input = match (sweeps, scene) {
        (Some(_), Some(_)) => {
            return Err(CliError::config("input.sweeps and input.scene are mutually exclusive"));
        }
        (Some(p), None) => Some(InputSource::Sweeps(p)),
        (None, Some(p)) => Some(InputSource::Scene(p)),
        (None, None) => None,
    };
    let cell = get_list(t, "cloud.voxel_cell")?;
    if cell.len() != 3 || cell.iter().any(|c| *c < 0.0) {
        return Err(bad("cloud.voxel_cell", &t["cloud.voxel_cell"], "three non-negative sizes"));
    }
    let init_mode = match t["solver.init_mode"].as_str() {
        "identity" => InitMode::Identity,
        "constant_velocity" => InitMode::ConstantVelocity,
        v => return Err(bad("solver.init_mode", v, "identity or constant_velocity")),
    };
    let surface_term = match t["ablation.surface_term"].as_str() {
        "spherical" => SurfaceTerm::Spherical,
        "euclidean" => SurfaceTerm::Euclidean,
        v => return Err(bad("ablation.surface_term", v, "spherical or euclidean")),
    };
    let lengths = get_list(t, "eval.lengths")?;
    if lengths.is_empty() || lengths.iter().any(|l| *l <= 0.0) {
        return Err(bad("eval.lengths", &t["eval.lengths"], "one or more positive lengths"));
    }
    let stride = get_usize(t, "eval.stride")?;
    if stride == 0 {
        return Err(bad("eval.stride", "0", "a stride >= 1"));
    }
    let normal_neighbors = get_usize(t, "cloud.normal_neighbors")?;
    if normal_neighbors < 2 {
        return Err(bad("cloud.normal_neighbors", &t["cloud.normal_neighbors"], "at least 2"));
    }

    let solver = SolverConfig {
        max_outer_iterations: get_usize(t, "solver.max_outer_iterations")?,
        step_size: get_f64(t, "solver.step_size")?,
        convergence_tol: get_f64(t, "solver.convergence_tol")?,
        max_backtracks: get_usize(t, "solver.max_backtracks")?,
        log_variance_bound: get_f64(t, "solver.log_variance_bound")?,
        weights: LossWeights {
            w1: get_f64(t, "loss.w1")?,
            w2: get_f64(t, "loss.w2")?,
            w3: get_f64(t, "loss.w3")?,
            w4: get_f64(t, "loss.w4")?,
            gamma: get_f64(t, "loss.gamma")?,
            flow_layer_weights: get_list(t, "loss.flow_layer_weights")?,
        },
        icp: IcpConfig {
            max_iterations: get_usize(t, "icp.max_iterations")?,
            translation_tol: get_f64(t, "icp.translation_tol")?,
            rotation_tol: get_f64(t, "icp.rotation_tol")?,
            epsilon: get_f64(t, "icp.epsilon")?,
            max_dist: get_f64(t, "icp.max_dist")?,
        },
        init_mode,
        use_confidence: true,
        surface_term: SurfaceTerm::Spherical,
    };
    solver.validate().map_err(|e| CliError::config(e.to_string()))?;

    Ok(RunConfig {
        input,
        gt: get_path(t, "input.gt"),
        output: get_path(t, "output.dir"),
        voxel_cell: Vector3::new(cell[0], cell[1], cell[2]),
        normal_neighbors,
        lengths,
        stride,
        solver,
        ablation: Ablation {
            use_confidence: get_bool(t, "ablation.use_confidence")?,
            surface_term,
            enable_l_ra: get_bool(t, "ablation.enable_l_ra")?,
            enable_l_tr: get_bool(t, "ablation.enable_l_tr")?,
            enable_l_fs: get_bool(t, "ablation.enable_l_fs")?,
        },
    })
}

/// Configuration sources in increasing precedence after the defaults.
#[derive(Debug, Default)]
pub struct Layers {
    pub file: Option<PathBuf>,
    pub env: Vec<(String, String)>,
    pub sets: Vec<(String, String)>,
}

/// Resolves defaults < file < environment < explicit settings.
pub fn resolve(layers: &Layers) -> Result<(Table, RunConfig), CliError> {
    let mut table = to_table(&RunConfig::default());
    if let Some(path) = &layers.file {
        let text = read_config(path)?;
        table.extend(parse_text(&text, &path.display().to_string())?);
    }
    table.extend(env_overrides(layers.env.iter().cloned()));
    table.extend(layers.sets.iter().cloned());
    let cfg = from_table(&table)?;
    Ok((table, cfg))
}

fn read_config(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path)
        .map_err(|e| CliError::config(format!("cannot read config {}: {e}", path.display())))
}

/// Manifest text: provenance comments followed by every resolved key.
pub fn render_manifest(table: &Table, provenance: &[(String, String)]) -> String {
    let mut out = String::new();
    for (k, v) in provenance {
        out.push_str(&format!("# {k}: {v}\n"));
    }
    for (k, v) in table {
        out.push_str(&format!("{k} = {v}\n"));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_table() {
        let table = to_table(&RunConfig::default());
        assert_eq!(table.len(), KEYS.len());
        assert_eq!(from_table(&table).unwrap(), RunConfig::default());
    }

    #[test]
    fn env_names() {
        assert_eq!(env_name("solver.step_size"), "ODOM_SOLVER__STEP_SIZE");
        let t = env_overrides(vec![
            ("ODOM_LOSS__W1".to_string(), "5".to_string()),
            ("ODOM_NOT_A_KEY".to_string(), "1".to_string()),
            ("PATH".to_string(), "/bin".to_string()),
        ]);
        assert_eq!(t.len(), 1);
        assert_eq!(t["loss.w1"], "5");
    }

    #[test]
    fn precedence_file_env_set() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("run.cfg");
        std::fs::write(&file, "# comment\nloss.w1 = 2\nloss.w2 = 3\nloss.w3 = 4\n").unwrap();
        let layers = Layers {
            file: Some(file),
            env: vec![("ODOM_LOSS__W2".into(), "30".into()), ("ODOM_LOSS__W3".into(), "40".into())],
            sets: vec![("loss.w3".into(), "400".into())],
        };
        let (_, cfg) = resolve(&layers).unwrap();
        let w = &cfg.solver.weights;
        assert_eq!((w.w1, w.w2, w.w3), (2.0, 30.0, 400.0));
    }

    #[test]
    fn rejects_unknown_and_malformed() {
        assert!(parse_text("nope = 1", "x").is_err());
        assert!(parse_text("loss.w1 1", "x").is_err());
        assert!(parse_set("loss.w1").is_err());
        let mut t = to_table(&RunConfig::default());
        t.insert("solver.init_mode".into(), "sideways".into());
        let err = from_table(&t).unwrap_err();
        assert!(err.to_string().contains("solver.init_mode"));
        let mut t = to_table(&RunConfig::default());
        t.insert("input.sweeps".into(), "a".into());
        t.insert("input.scene".into(), "b".into());
        assert!(from_table(&t).is_err());
    }

    #[test]
    fn manifest_parses_back() {
        let mut cfg = RunConfig::default();
        cfg.solver.step_size = 0.1 + 0.2;
        cfg.input = Some(InputSource::Scene("scene.toml".into()));
        let table = to_table(&cfg);
        let text = render_manifest(&table, &[("version".into(), "x".into())]);
        let parsed = parse_text(&text, "manifest").unwrap();
        assert_eq!(parsed, table);
        assert_eq!(from_table(&parsed).unwrap(), cfg);
    }

    #[test]
    fn ablation_switches_zero_weights() {
        let mut cfg = RunConfig::default();
        cfg.ablation.enable_l_tr = false;
        cfg.ablation.use_confidence = false;
        let s = cfg.effective_solver();
        assert_eq!(s.weights.w3, 0.0);
        assert_eq!(s.weights.w4, 1.0);
        assert!(!s.use_confidence);
    }
}
