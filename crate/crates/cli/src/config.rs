//! Run configuration: JSON with unknown keys rejected, followed by a
//! validation pass that reports every violation at once.

use std::fmt;
use std::path::{Path, PathBuf};

use proxsweep_core::explicit::{Scheme, SolverOptions};
use proxsweep_core::library::{FamilySpec, StateMapSpec};
use proxsweep_core::paths::{PLPath, TimeGrid};
use serde::Deserialize;

use crate::formats;

pub const DEFAULT_SEED: u64 = 0x5eed;

/// Inline path: node times and one value row per node.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InlinePath {
    pub nodes: Vec<f64>,
    pub values: Vec<Vec<f64>>,
}

/// Built-in problems addressable by name.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum Benchmark {
    PlayRamp,
    DraggingBall,
    StarDrag,
    ImplicitPlay {
        #[serde(default = "half")]
        delta: f64,
    },
}

fn half() -> f64 {
    0.5
}

impl Benchmark {
    pub fn default_steps(&self) -> usize {
        match self {
            Benchmark::ImplicitPlay { .. } => 1000,
            _ => 400,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSection {
    pub scheme: Scheme,
    pub gate_factor: f64,
    pub activation_tol: f64,
    pub vi_samples: usize,
    pub compensator: bool,
}

impl Default for SolverSection {
    fn default() -> Self {
        let d = SolverOptions::default();
        Self {
            scheme: Scheme::CatchingUp,
            gate_factor: d.gate_factor,
            activation_tol: d.activation_tol,
            vi_samples: d.vi_samples,
            compensator: d.compensator,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PicardSection {
    pub tol: f64,
    pub max_iter: usize,
    pub epsilon: f64,
}

impl Default for PicardSection {
    fn default() -> Self {
        Self { tol: 1e-8, max_iter: 200, epsilon: 0.1 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum StudyKind {
    Continuity,
    Lipschitz,
    Implicit,
    Order,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StudySection {
    pub kind: Option<StudyKind>,
    pub scales: Option<Vec<f64>>,
    pub perturb_w: bool,
    /// Grid sizes for the order study.
    pub grids: Vec<usize>,
    /// Steps of the reference run when no exact oracle exists.
    pub reference_steps: Option<usize>,
}

impl Default for StudySection {
    fn default() -> Self {
        Self { kind: None, scales: None, perturb_w: true, grids: vec![100, 200, 400], reference_steps: None }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CertifySection {
    pub n_boundary: usize,
    pub n_pairs: usize,
    pub n_param: usize,
    pub box_scale: f64,
    /// Parameter values to certify over; the origin when absent.
    pub w_samples: Option<Vec<Vec<f64>>>,
}

impl Default for CertifySection {
    fn default() -> Self {
        let d = proxsweep_core::certify::CertifyOptions::default();
        Self { n_boundary: d.n_boundary, n_pairs: d.n_pairs, n_param: d.n_param, box_scale: d.box_scale, w_samples: None }
    }
}

/// Raw configuration as written in the file.
#[derive(Debug, Clone, PartialEq, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawConfig {
    pub benchmark: Option<Benchmark>,
    pub family: Option<FamilySpec>,
    pub u: Option<InlinePath>,
    pub u_file: Option<PathBuf>,
    pub w: Option<InlinePath>,
    pub w_file: Option<PathBuf>,
    pub x0: Option<Vec<f64>>,
    pub grid_n: Option<usize>,
    pub seed: Option<u64>,
    #[serde(default)]
    pub solver: SolverSection,
    #[serde(default)]
    pub picard: PicardSection,
    pub state_map: Option<StateMapSpec>,
    #[serde(default)]
    pub study: StudySection,
    #[serde(default)]
    pub certify: CertifySection,
    pub output_dir: Option<PathBuf>,
}

/// Where the problem comes from once validated.
#[derive(Debug, Clone)]
pub enum ProblemSource {
    Benchmark(Benchmark),
    Custom { family: FamilySpec, u: PLPath, w: Option<PLPath>, x0: Vec<f64> },
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub problem: ProblemSource,
    pub grid_n: Option<usize>,
    pub seed: u64,
    pub solver: SolverSection,
    pub picard: PicardSection,
    pub state_map: Option<StateMapSpec>,
    pub study: StudySection,
    pub certify: CertifySection,
    pub output_dir: PathBuf,
}

impl RunConfig {
    pub fn solver_options(&self) -> SolverOptions {
        SolverOptions {
            gate_factor: self.solver.gate_factor,
            activation_tol: self.solver.activation_tol,
            vi_samples: self.solver.vi_samples,
            compensator: self.solver.compensator,
            seed: self.seed,
        }
    }
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub grid_n: Option<usize>,
    pub scheme: Option<Scheme>,
    pub output_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ConfigError {
    Parse { line: usize, column: usize, message: String },
    Invalid(Vec<String>),
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConfigError::Parse { line, column, message } => write!(f, "config parse error at line {line}, column {column}: {message}"),
            ConfigError::Invalid(v) => {
                writeln!(f, "invalid config ({} problem{}):", v.len(), if v.len() == 1 { "" } else { "s" })?;
                for m in v {
                    writeln!(f, "  - {m}")?;
                }
                Ok(())
            }
        }
    }
}

impl std::error::Error for ConfigError {}

pub fn parse_raw(text: &str) -> Result<RawConfig, ConfigError> {
    serde_json::from_str(text).map_err(|e| ConfigError::Parse {
        line: e.line(),
        column: e.column(),
        message: strip_position(&e.to_string()),
    })
}

fn strip_position(msg: &str) -> String {
    match msg.rfind(" at line ") {
        Some(i) => msg[..i].to_string(),
        None => msg.to_string(),
    }
}

fn inline_path(name: &str, p: &InlinePath, errors: &mut Vec<String>) -> Option<PLPath> {
    let dim = p.values.first().map_or(0, Vec::len);
    if p.values.len() != p.nodes.len() {
        errors.push(format!("{name}: {} nodes but {} value rows", p.nodes.len(), p.values.len()));
        return None;
    }
    if dim == 0 || p.values.iter().any(|r| r.len() != dim) {
        errors.push(format!("{name}: value rows must be non-empty and of equal length"));
        return None;
    }
    let grid = match TimeGrid::new(p.nodes.clone()) {
        Ok(g) => g,
        Err(e) => {
            errors.push(format!("{name}: {e}"));
            return None;
        }
    };
    match PLPath::new(grid, dim, p.values.concat()) {
        Ok(p) => Some(p),
        Err(e) => {
            errors.push(format!("{name}: {e}"));
            None
        }
    }
}

fn load_path(
    name: &str,
    inline: &Option<InlinePath>,
    file: &Option<PathBuf>,
    base: &Path,
    required: bool,
    errors: &mut Vec<String>,
) -> Option<PLPath> {
    match (inline, file) {
        (Some(_), Some(_)) => {
            errors.push(format!("{name} and {name}_file are mutually exclusive"));
            None
        }
        (Some(p), None) => inline_path(name, p, errors),
        (None, Some(f)) => {
            let full = base.join(f);
            match formats::read_path_csv(&full) {
                Ok(p) => Some(p),
                Err(e) => {
                    errors.push(format!("{name}_file: {e:#}"));
                    None
                }
            }
        }
        (None, None) => {
            if required {
                errors.push(format!("{name}: required (inline `{name}` or `{name}_file`)"));
            }
            None
        }
    }
}

fn positive(name: &str, v: f64, errors: &mut Vec<String>) {
    if !(v > 0.0 && v.is_finite()) {
        errors.push(format!("{name}: must be positive and finite, got {v}"));
    }
}

/// Validates `raw` with file references resolved against `base`, then applies overrides.
pub fn validate(mut raw: RawConfig, base: &Path, ov: &Overrides) -> Result<RunConfig, ConfigError> {
    let mut errors = Vec::new();
    if let Some(s) = ov.scheme {
        raw.solver.scheme = s;
    }
    let grid_n = ov.grid_n.or(raw.grid_n);
    if grid_n == Some(0) {
        errors.push("grid_n: must be at least 1".into());
    }
    let problem = match (&raw.benchmark, &raw.family) {
        (Some(_), Some(_)) => {
            errors.push("benchmark and family are mutually exclusive".into());
            None
        }
        (None, None) => {
            errors.push("one of benchmark or family is required".into());
            None
        }
        (Some(b), None) => {
            for (set, key) in [
                (raw.u.is_some() || raw.u_file.is_some(), "u"),
                (raw.w.is_some() || raw.w_file.is_some(), "w"),
                (raw.x0.is_some(), "x0"),
            ] {
                if set {
                    errors.push(format!("{key}: not allowed with a benchmark"));
                }
            }
            if let Benchmark::ImplicitPlay { delta } = b {
                if !(*delta >= 0.0 && *delta < 1.0) {
                    errors.push(format!("benchmark.delta: must lie in [0, 1), got {delta}"));
                }
            }
            Some(ProblemSource::Benchmark(b.clone()))
        }
        (None, Some(f)) => {
            let u = load_path("u", &raw.u, &raw.u_file, base, true, &mut errors);
            let w = load_path("w", &raw.w, &raw.w_file, base, false, &mut errors);
            if raw.x0.is_none() {
                errors.push("x0: required for a custom problem".into());
            }
            match (u, raw.x0.clone()) {
                (Some(u), Some(x0)) => Some(ProblemSource::Custom { family: f.clone(), u, w, x0 }),
                _ => None,
            }
        }
    };
    let s = &raw.solver;
    positive("solver.gate_factor", s.gate_factor, &mut errors);
    positive("solver.activation_tol", s.activation_tol, &mut errors);
    positive("picard.tol", raw.picard.tol, &mut errors);
    if raw.picard.max_iter == 0 {
        errors.push("picard.max_iter: must be at least 1".into());
    }
    if !(raw.picard.epsilon > 0.0 && raw.picard.epsilon < 1.0) {
        errors.push(format!("picard.epsilon: must lie in (0, 1), got {}", raw.picard.epsilon));
    }
    if let Some(sc) = &raw.study.scales {
        if sc.is_empty() || sc.iter().any(|v| !(*v > 0.0)) || sc.windows(2).any(|w| w[1] >= w[0]) {
            errors.push("study.scales: must be positive and strictly decreasing".into());
        }
    }
    if raw.study.grids.len() < 2 || raw.study.grids.windows(2).any(|w| w[1] <= w[0]) || raw.study.grids[0] == 0 {
        errors.push("study.grids: need at least two increasing positive sizes".into());
    }
    positive("certify.box_scale", raw.certify.box_scale, &mut errors);
    for (name, v) in [("certify.n_boundary", raw.certify.n_boundary), ("certify.n_pairs", raw.certify.n_pairs), ("certify.n_param", raw.certify.n_param)] {
        if v == 0 {
            errors.push(format!("{name}: must be at least 1"));
        }
    }
    if !errors.is_empty() {
        return Err(ConfigError::Invalid(errors));
    }
    Ok(RunConfig {
        problem: problem.expect("validated"),
        grid_n,
        seed: ov.seed.or(raw.seed).unwrap_or(DEFAULT_SEED),
        solver: raw.solver,
        picard: raw.picard,
        state_map: raw.state_map,
        study: raw.study,
        certify: raw.certify,
        output_dir: ov.output_dir.clone().or(raw.output_dir).unwrap_or_else(|| PathBuf::from("out")),
    })
}

/// Parses and validates; file references are relative to `base`.
pub fn parse_config(text: &str, base: &Path, ov: &Overrides) -> Result<RunConfig, ConfigError> {
    validate(parse_raw(text)?, base, ov)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<RunConfig, ConfigError> {
        parse_config(text, Path::new("."), &Overrides::default())
    }

    #[test]
    fn minimal_play_config_gets_defaults() {
        let cfg = parse(
            r#"{"family": {"family": "scalar_play", "rho": 1.0},
                "u": {"nodes": [0, 1], "values": [[0], [2]]},
                "x0": [0]}"#,
        )
        .unwrap();
        assert_eq!(cfg.seed, DEFAULT_SEED);
        assert_eq!(cfg.solver, SolverSection::default());
        assert_eq!(cfg.picard, PicardSection::default());
        assert_eq!(cfg.output_dir, PathBuf::from("out"));
        assert!(matches!(cfg.problem, ProblemSource::Custom { w: None, .. }));
    }

    #[test]
    fn missing_x0_is_named() {
        let e = parse(r#"{"family": {"family": "scalar_play", "rho": 1.0}, "u": {"nodes": [0, 1], "values": [[0], [2]]}}"#)
            .unwrap_err();
        match e {
            ConfigError::Invalid(v) => assert!(v.iter().any(|m| m.starts_with("x0")), "{v:?}"),
            other => panic!("{other}"),
        }
    }

    #[test]
    fn inline_and_file_are_mutually_exclusive() {
        let e = parse(
            r#"{"family": {"family": "scalar_play", "rho": 1.0},
                "u": {"nodes": [0, 1], "values": [[0], [2]]}, "u_file": "u.csv", "x0": [0]}"#,
        )
        .unwrap_err();
        assert!(e.to_string().contains("mutually exclusive"), "{e}");
    }

    #[test]
    fn unknown_keys_report_position() {
        let e = parse("{\n  \"benchmark\": {\"name\": \"play_ramp\"},\n  \"sovler\": {}\n}").unwrap_err();
        match e {
            ConfigError::Parse { line, message, .. } => {
                assert_eq!(line, 3);
                assert!(message.contains("sovler"), "{message}");
            }
            other => panic!("{other}"),
        }
        let e = parse(r#"{"family": {"family": "star", "r0": 1, "a": 0.2, "k": 3, "lobes": 2}}"#).unwrap_err();
        assert!(matches!(e, ConfigError::Parse { .. }));
    }

    #[test]
    fn all_violations_are_listed() {
        let e = parse(
            r#"{"benchmark": {"name": "play_ramp"}, "x0": [0], "grid_n": 0,
                "picard": {"tol": -1, "epsilon": 2}, "solver": {"gate_factor": 0}}"#,
        )
        .unwrap_err();
        match e {
            ConfigError::Invalid(v) => assert_eq!(v.len(), 5, "{v:?}"),
            other => panic!("{other}"),
        }
    }

    #[test]
    fn overrides_take_precedence() {
        let ov = Overrides { seed: Some(7), grid_n: Some(50), scheme: Some(Scheme::BoundaryOde), output_dir: Some("x".into()) };
        let cfg = parse_config(r#"{"benchmark": {"name": "star_drag"}, "seed": 3, "grid_n": 10}"#, Path::new("."), &ov).unwrap();
        assert_eq!((cfg.seed, cfg.grid_n, cfg.solver.scheme), (7, Some(50), Scheme::BoundaryOde));
        assert_eq!(cfg.output_dir, PathBuf::from("x"));
        assert_eq!(cfg.solver_options().seed, 7);
    }

    #[test]
    fn path_files_are_resolved_against_the_base() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("u.csv"), "t,v0\n0,0\n1,2\n").unwrap();
        let cfg = parse_config(
            r#"{"family": {"family": "scalar_play", "rho": 1.0}, "u_file": "u.csv", "x0": [0]}"#,
            dir.path(),
            &Overrides::default(),
        )
        .unwrap();
        match cfg.problem {
            ProblemSource::Custom { u, .. } => assert_eq!(u.last(), &[2.0]),
            _ => panic!(),
        }
        let e = parse_config(
            r#"{"family": {"family": "scalar_play", "rho": 1.0}, "u_file": "missing.csv", "x0": [0]}"#,
            dir.path(),
            &Overrides::default(),
        )
        .unwrap_err();
        assert!(e.to_string().contains("u_file"));
    }
}
