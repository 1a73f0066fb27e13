//! Run configuration: a small sectioned key-value format with full
//! validation. Parsing reports every violation (with line numbers), not
//! just the first.
//!
//! ```text
//! # comment
//! [physics]
//! potential = 0 0 0.5      # coefficients c0 c1 c2 ...
//! mass = 1.0
//! hbar = 1.0
//! gamma = 0.0
//! diffusion = 0.0
//!
//! [initial]
//! state = coherent         # gaussian | coherent | cat | eigenstate | mixture
//! q0 = 1.0
//! p0 = 0.0
//!
//! [grid]
//! q_min = -8.0
//! q_max = 8.0
//! p_min = -8.0
//! p_max = 8.0
//! nq = 256
//! np = 256
//!
//! [evolution]
//! t_final = 6.2831853
//! dt = auto
//!
//! [output]
//! directory = out
//! ```
//!
//! Mixtures list one `member = <weight> <kind> <params...>` line per
//! member, optionally followed by `potential <c0 c1 ...>` to give that
//! member its own potential.

use std::collections::BTreeMap;
use std::fmt;

use crate::ensemble::{EnsembleMember, WignerEnsemble};
use crate::error::{EnsembleError, SolverError};
use crate::evolve::EvolutionConfig;
use crate::moyal::{default_basis_order, moyal_series, LindbladParams, PolynomialPotential};
use crate::phase_space::{weyl_transform_guarded, PhaseSpaceGrid, Wavefunction, WignerState};
use crate::util::is_power_of_two;
use crate::wavelet::{daubechies_filters, FilterPair};

/// One validation failure with its source line (0 for file-level issues).
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigViolation {
    pub line: usize,
    pub message: String,
}

impl fmt::Display for ConfigViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.line > 0 {
            write!(f, "line {}: {}", self.line, self.message)
        } else {
            write!(f, "{}", self.message)
        }
    }
}

/// All violations found in a config file.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub violations: Vec<ConfigViolation>,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{} configuration error(s):", self.violations.len())?;
        for v in &self.violations {
            writeln!(f, "  {v}")?;
        }
        Ok(())
    }
}

impl std::error::Error for ConfigError {}

/// Initial-state family.
#[derive(Debug, Clone, PartialEq)]
pub enum StateKind {
    Gaussian,
    Coherent { q0: f64, p0: f64 },
    Cat { q0: f64, p0: f64, phase: f64 },
    Eigenstate { n: usize },
}

/// One mixture entry; `potential = None` uses the shared physics potential.
#[derive(Debug, Clone, PartialEq)]
pub struct MemberSpec {
    pub weight: f64,
    pub kind: StateKind,
    pub potential: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum InitialSpec {
    Pure(StateKind),
    Mixture(Vec<MemberSpec>),
}

/// Fully validated run configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    // [physics]
    pub potential: Vec<f64>,
    pub mass: f64,
    pub hbar: f64,
    pub gamma: f64,
    pub diffusion: f64,
    // [initial]
    pub initial: InitialSpec,
    /// Reference-oscillator frequency for packet shapes; `None` derives it
    /// from the quadratic part of the potential (falling back to 1).
    pub omega: Option<f64>,
    // [grid]
    pub q_min: f64,
    pub q_max: f64,
    pub p_min: f64,
    pub p_max: f64,
    pub nq: usize,
    pub np: usize,
    // [evolution]
    pub t_final: f64,
    pub dt: Option<f64>,
    pub epsilon_level: f64,
    pub min_levels: usize,
    pub max_levels: usize,
    pub snapshot_stride: usize,
    pub diagnostics_stride: usize,
    /// `None`: pick the minimal order passing the regularity gate.
    pub wavelet_order: Option<usize>,
    pub operator_threshold: f64,
    pub coarsest_level: usize,
    pub boundary_guard: f64,
    // [output]
    pub directory: String,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            potential: vec![0.0],
            mass: 1.0,
            hbar: 1.0,
            gamma: 0.0,
            diffusion: 0.0,
            initial: InitialSpec::Pure(StateKind::Gaussian),
            omega: None,
            q_min: -8.0,
            q_max: 8.0,
            p_min: -8.0,
            p_max: 8.0,
            nq: 256,
            np: 256,
            t_final: 1.0,
            dt: None,
            epsilon_level: 1e-4,
            min_levels: 6,
            max_levels: 9,
            snapshot_stride: 0,
            diagnostics_stride: 10,
            wavelet_order: None,
            operator_threshold: 0.0,
            coarsest_level: 3,
            boundary_guard: 1e-6,
            directory: "out".to_string(),
        }
    }
}

const SECTIONS: [&str; 5] = ["physics", "initial", "grid", "evolution", "output"];

struct RawConfig {
    /// (section, key) -> (value, line); repeated keys other than `member`
    /// keep the last occurrence and flag a violation.
    entries: BTreeMap<(String, String), (String, usize)>,
    members: Vec<(String, usize)>,
    violations: Vec<ConfigViolation>,
    seen_sections: Vec<String>,
}

fn scan(text: &str) -> RawConfig {
    let mut raw = RawConfig {
        entries: BTreeMap::new(),
        members: Vec::new(),
        violations: Vec::new(),
        seen_sections: Vec::new(),
    };
    let mut section: Option<String> = None;
    for (idx, raw_line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = match raw_line.find('#') {
            Some(pos) => &raw_line[..pos],
            None => raw_line,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        if let Some(name) = line.strip_prefix('[') {
            match name.strip_suffix(']') {
                Some(name) if SECTIONS.contains(&name) => {
                    section = Some(name.to_string());
                    raw.seen_sections.push(name.to_string());
                }
                Some(name) => {
                    raw.violations.push(ConfigViolation {
                        line: line_no,
                        message: format!("unknown section [{name}]"),
                    });
                    section = None;
                }
                None => raw.violations.push(ConfigViolation {
                    line: line_no,
                    message: "malformed section header".to_string(),
                }),
            }
            continue;
        }
        let Some(eq) = line.find('=') else {
            raw.violations.push(ConfigViolation {
                line: line_no,
                message: format!("expected `key = value`, got `{line}`"),
            });
            continue;
        };
        let key = line[..eq].trim().to_string();
        let value = line[eq + 1..].trim().to_string();
        let Some(section) = section.as_ref() else {
            raw.violations.push(ConfigViolation {
                line: line_no,
                message: format!("key `{key}` outside any section"),
            });
            continue;
        };
        if section == "initial" && key == "member" {
            raw.members.push((value, line_no));
            continue;
        }
        if let Some((_, prev_line)) = raw
            .entries
            .insert((section.clone(), key.clone()), (value, line_no))
        {
            raw.violations.push(ConfigViolation {
                line: line_no,
                message: format!("duplicate key `{key}` (first set on line {prev_line})"),
            });
        }
    }
    raw
}

struct Extractor {
    raw: RawConfig,
    used: Vec<(String, String)>,
}

impl Extractor {
    fn take(&mut self, section: &str, key: &str) -> Option<(String, usize)> {
        self.used.push((section.to_string(), key.to_string()));
        self.raw
            .entries
            .get(&(section.to_string(), key.to_string()))
            .cloned()
    }

    fn violation(&mut self, line: usize, message: impl Into<String>) {
        self.raw.violations.push(ConfigViolation {
            line,
            message: message.into(),
        });
    }

    fn f64_or(&mut self, section: &str, key: &str, default: f64) -> f64 {
        match self.take(section, key) {
            None => default,
            Some((v, line)) => match v.parse::<f64>() {
                Ok(x) => x,
                Err(_) => {
                    self.violation(line, format!("`{key}` must be a number, got `{v}`"));
                    default
                }
            },
        }
    }

    fn usize_or(&mut self, section: &str, key: &str, default: usize) -> (usize, usize) {
        match self.take(section, key) {
            None => (default, 0),
            Some((v, line)) => match v.parse::<usize>() {
                Ok(x) => (x, line),
                Err(_) => {
                    self.violation(line, format!("`{key}` must be a non-negative integer, got `{v}`"));
                    (default, line)
                }
            },
        }
    }

    fn string_or(&mut self, section: &str, key: &str, default: &str) -> String {
        self.take(section, key).map(|(v, _)| v).unwrap_or_else(|| default.to_string())
    }

    fn finish_unknown_keys(&mut self) {
        let known: std::collections::BTreeSet<(String, String)> =
            self.used.iter().cloned().collect();
        let unknown: Vec<(String, String, usize)> = self
            .raw
            .entries
            .iter()
            .filter(|(k, _)| !known.contains(*k))
            .map(|((s, k), (_, line))| (s.clone(), k.clone(), *line))
            .collect();
        for (section, key, line) in unknown {
            self.violation(line, format!("unknown key `{key}` in section [{section}]"));
        }
    }
}

fn parse_state_kind(
    tokens: &[&str],
    line: usize,
    violations: &mut Vec<ConfigViolation>,
) -> Option<(StateKind, usize)> {
    let kind = tokens.first()?;
    match *kind {
        "gaussian" => Some((StateKind::Gaussian, 1)),
        "coherent" => {
            if tokens.len() < 3 {
                violations.push(ConfigViolation {
                    line,
                    message: "coherent needs `q0 p0`".to_string(),
                });
                return None;
            }
            let q0 = tokens[1].parse().ok()?;
            let p0 = tokens[2].parse().ok()?;
            Some((StateKind::Coherent { q0, p0 }, 3))
        }
        "cat" => {
            if tokens.len() < 4 {
                violations.push(ConfigViolation {
                    line,
                    message: "cat needs `q0 p0 phase`".to_string(),
                });
                return None;
            }
            let q0 = tokens[1].parse().ok()?;
            let p0 = tokens[2].parse().ok()?;
            let phase = tokens[3].parse().ok()?;
            Some((StateKind::Cat { q0, p0, phase }, 4))
        }
        "eigenstate" => {
            if tokens.len() < 2 {
                violations.push(ConfigViolation {
                    line,
                    message: "eigenstate needs `n`".to_string(),
                });
                return None;
            }
            let n: usize = tokens[1].parse().ok()?;
            if n > 3 {
                violations.push(ConfigViolation {
                    line,
                    message: format!("eigenstate index must be <= 3, got {n}"),
                });
                return None;
            }
            Some((StateKind::Eigenstate { n }, 2))
        }
        other => {
            violations.push(ConfigViolation {
                line,
                message: format!("unknown state kind `{other}`"),
            });
            None
        }
    }
}

/// Parse and validate a configuration, reporting every violation found.
pub fn parse_config(text: &str) -> Result<RunConfig, ConfigError> {
    let raw = scan(text);
    let mut ex = Extractor {
        raw,
        used: Vec::new(),
    };
    let d = RunConfig::default();

    for required in ["physics", "grid"] {
        if !ex.raw.seen_sections.iter().any(|s| s == required) {
            ex.violation(0, format!("missing required section [{required}]"));
        }
    }

    // [physics]
    let potential = match ex.take("physics", "potential") {
        None => {
            ex.violation(0, "missing `potential` in [physics]");
            d.potential.clone()
        }
        Some((v, line)) => {
            let coeffs: Result<Vec<f64>, _> = v.split_whitespace().map(str::parse).collect();
            match coeffs {
                Ok(c) if !c.is_empty() => c,
                _ => {
                    ex.violation(line, format!("`potential` must list coefficients, got `{v}`"));
                    d.potential.clone()
                }
            }
        }
    };
    let mass = match ex.take("physics", "mass") {
        None => d.mass,
        Some((v, line)) => match v.as_str() {
            "inf" | "infinite" => f64::INFINITY,
            _ => match v.parse::<f64>() {
                Ok(m) if m > 0.0 => m,
                _ => {
                    ex.violation(line, format!("`mass` must be positive or `inf`, got `{v}`"));
                    d.mass
                }
            },
        },
    };
    let hbar = ex.f64_or("physics", "hbar", d.hbar);
    let gamma = ex.f64_or("physics", "gamma", d.gamma);
    let diffusion = ex.f64_or("physics", "diffusion", d.diffusion);

    // [initial]
    let omega = match ex.take("initial", "omega") {
        None => None,
        Some((v, line)) => {
            if v == "auto" {
                None
            } else {
                match v.parse::<f64>() {
                    Ok(w) if w > 0.0 => Some(w),
                    _ => {
                        ex.violation(line, format!("`omega` must be positive or `auto`, got `{v}`"));
                        None
                    }
                }
            }
        }
    };
    let state_entry = ex.take("initial", "state");
    let q0 = ex.f64_or("initial", "q0", 0.0);
    let p0 = ex.f64_or("initial", "p0", 0.0);
    let phase = ex.f64_or("initial", "phase", 0.0);
    let (n_eigen, _) = ex.usize_or("initial", "n", 0);
    let members_raw = std::mem::take(&mut ex.raw.members);

    let initial = match state_entry {
        None if members_raw.is_empty() => d.initial.clone(),
        Some((ref s, line)) if s == "mixture" || !members_raw.is_empty() => {
            if s != "mixture" {
                ex.violation(
                    line,
                    "`member` lines require `state = mixture`".to_string(),
                );
            }
            let mut members = Vec::new();
            for (value, mline) in &members_raw {
                let tokens: Vec<&str> = value.split_whitespace().collect();
                if tokens.is_empty() {
                    ex.violation(*mline, "empty member".to_string());
                    continue;
                }
                let Ok(weight) = tokens[0].parse::<f64>() else {
                    ex.violation(*mline, format!("member weight must be a number, got `{}`", tokens[0]));
                    continue;
                };
                let Some((kind, used)) =
                    parse_state_kind(&tokens[1..], *mline, &mut ex.raw.violations)
                else {
                    continue;
                };
                let rest = &tokens[1 + used..];
                let potential = if rest.is_empty() {
                    None
                } else if rest[0] == "potential" {
                    let coeffs: Result<Vec<f64>, _> =
                        rest[1..].iter().map(|t| t.parse()).collect();
                    match coeffs {
                        Ok(c) if !c.is_empty() => Some(c),
                        _ => {
                            ex.violation(*mline, "member potential needs coefficients".to_string());
                            None
                        }
                    }
                } else {
                    ex.violation(*mline, format!("unexpected member tokens `{}`", rest.join(" ")));
                    None
                };
                members.push(MemberSpec {
                    weight,
                    kind,
                    potential,
                });
            }
            if members.is_empty() {
                ex.violation(line, "mixture needs at least one `member` line".to_string());
                d.initial.clone()
            } else {
                let sum: f64 = members.iter().map(|m| m.weight).sum();
                if (sum - 1.0).abs() > 1e-12 {
                    ex.violation(
                        line,
                        format!("mixture weights must satisfy \u{3a3} w_i = 1, got {sum}"),
                    );
                }
                if let Some(bad) = members.iter().find(|m| m.weight < 0.0) {
                    ex.violation(line, format!("negative member weight {}", bad.weight));
                }
                InitialSpec::Mixture(members)
            }
        }
        Some((s, line)) => {
            let kind = match s.as_str() {
                "gaussian" => StateKind::Gaussian,
                "coherent" => StateKind::Coherent { q0, p0 },
                "cat" => StateKind::Cat { q0, p0, phase },
                "eigenstate" => {
                    if n_eigen > 3 {
                        ex.violation(line, format!("eigenstate index must be <= 3, got {n_eigen}"));
                    }
                    StateKind::Eigenstate { n: n_eigen.min(3) }
                }
                other => {
                    ex.violation(line, format!("unknown state kind `{other}`"));
                    StateKind::Gaussian
                }
            };
            InitialSpec::Pure(kind)
        }
        None => {
            ex.violation(
                members_raw.first().map(|m| m.1).unwrap_or(0),
                "`member` lines require `state = mixture`".to_string(),
            );
            d.initial.clone()
        }
    };

    // [grid]
    let q_min = ex.f64_or("grid", "q_min", d.q_min);
    let q_max = ex.f64_or("grid", "q_max", d.q_max);
    let p_min = ex.f64_or("grid", "p_min", d.p_min);
    let p_max = ex.f64_or("grid", "p_max", d.p_max);
    let (nq, nq_line) = ex.usize_or("grid", "nq", d.nq);
    let (np, np_line) = ex.usize_or("grid", "np", d.np);

    // [evolution]
    let t_final = ex.f64_or("evolution", "t_final", d.t_final);
    let dt = match ex.take("evolution", "dt") {
        None => None,
        Some((v, line)) => {
            if v == "auto" {
                None
            } else {
                match v.parse::<f64>() {
                    Ok(x) if x > 0.0 => Some(x),
                    _ => {
                        ex.violation(line, format!("`dt` must be positive or `auto`, got `{v}`"));
                        None
                    }
                }
            }
        }
    };
    let epsilon_level = ex.f64_or("evolution", "epsilon_level", d.epsilon_level);
    let (min_levels, _) = ex.usize_or("evolution", "min_levels", d.min_levels);
    let (max_levels, ml_line) = ex.usize_or("evolution", "max_levels", d.max_levels);
    let (snapshot_stride, _) = ex.usize_or("evolution", "snapshot_stride", d.snapshot_stride);
    let (diagnostics_stride, _) =
        ex.usize_or("evolution", "diagnostics_stride", d.diagnostics_stride);
    let wavelet_order = match ex.take("evolution", "wavelet_order") {
        None => None,
        Some((v, line)) => {
            if v == "auto" {
                None
            } else {
                match v.parse::<usize>() {
                    Ok(m) if (1..=10).contains(&m) => Some(m),
                    _ => {
                        ex.violation(line, format!("`wavelet_order` must be 1..=10 or `auto`, got `{v}`"));
                        None
                    }
                }
            }
        }
    };
    let operator_threshold = ex.f64_or("evolution", "operator_threshold", d.operator_threshold);
    let (coarsest_level, _) = ex.usize_or("evolution", "coarsest_level", d.coarsest_level);
    let boundary_guard = ex.f64_or("evolution", "boundary_guard", d.boundary_guard);

    // [output]
    let directory = ex.string_or("output", "directory", &d.directory);

    ex.finish_unknown_keys();

    // Semantic validation.
    if !(hbar > 0.0) {
        ex.violation(0, format!("hbar must be positive, got {hbar}"));
    }
    if gamma < 0.0 {
        ex.violation(0, format!("gamma must be non-negative, got {gamma}"));
    }
    if diffusion < 0.0 {
        ex.violation(0, format!("diffusion must be non-negative, got {diffusion}"));
    }
    if !is_power_of_two(nq) {
        ex.violation(nq_line, format!("nq must be a power of two, got {nq}"));
    }
    if !is_power_of_two(np) {
        ex.violation(np_line, format!("np must be a power of two, got {np}"));
    }
    if !(q_max > q_min) {
        ex.violation(0, format!("grid requires q_max > q_min, got [{q_min}, {q_max}]"));
    }
    if !(p_max > p_min) {
        ex.violation(0, format!("grid requires p_max > p_min, got [{p_min}, {p_max}]"));
    }
    if !(t_final > 0.0) {
        ex.violation(0, format!("t_final must be positive, got {t_final}"));
    }
    if min_levels > max_levels || max_levels > 12 {
        ex.violation(
            ml_line,
            format!("level range {min_levels}..{max_levels} invalid (max 12)"),
        );
    }
    if operator_threshold < 0.0 {
        ex.violation(0, format!("operator_threshold must be non-negative, got {operator_threshold}"));
    }

    if !ex.raw.violations.is_empty() {
        let mut violations = ex.raw.violations;
        violations.sort_by_key(|v| v.line);
        return Err(ConfigError { violations });
    }

    Ok(RunConfig {
        potential,
        mass,
        hbar,
        gamma,
        diffusion,
        initial,
        omega,
        q_min,
        q_max,
        p_min,
        p_max,
        nq,
        np,
        t_final,
        dt,
        epsilon_level,
        min_levels,
        max_levels,
        snapshot_stride,
        diagnostics_stride,
        wavelet_order,
        operator_threshold,
        coarsest_level,
        boundary_guard,
        directory,
    })
}

fn fmt_coeffs(coeffs: &[f64]) -> String {
    coeffs
        .iter()
        .map(|c| format!("{c}"))
        .collect::<Vec<_>>()
        .join(" ")
}

impl RunConfig {
    /// Serialize to the config text format; `parse_config` of the output
    /// reproduces the config exactly.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str("[physics]\n");
        out.push_str(&format!("potential = {}\n", fmt_coeffs(&self.potential)));
        if self.mass.is_finite() {
            out.push_str(&format!("mass = {}\n", self.mass));
        } else {
            out.push_str("mass = inf\n");
        }
        out.push_str(&format!("hbar = {}\n", self.hbar));
        out.push_str(&format!("gamma = {}\n", self.gamma));
        out.push_str(&format!("diffusion = {}\n", self.diffusion));
        out.push_str("\n[initial]\n");
        match &self.initial {
            InitialSpec::Pure(kind) => match kind {
                StateKind::Gaussian => out.push_str("state = gaussian\n"),
                StateKind::Coherent { q0, p0 } => {
                    out.push_str("state = coherent\n");
                    out.push_str(&format!("q0 = {q0}\np0 = {p0}\n"));
                }
                StateKind::Cat { q0, p0, phase } => {
                    out.push_str("state = cat\n");
                    out.push_str(&format!("q0 = {q0}\np0 = {p0}\nphase = {phase}\n"));
                }
                StateKind::Eigenstate { n } => {
                    out.push_str("state = eigenstate\n");
                    out.push_str(&format!("n = {n}\n"));
                }
            },
            InitialSpec::Mixture(members) => {
                out.push_str("state = mixture\n");
                for m in members {
                    let kind = match &m.kind {
                        StateKind::Gaussian => "gaussian".to_string(),
                        StateKind::Coherent { q0, p0 } => format!("coherent {q0} {p0}"),
                        StateKind::Cat { q0, p0, phase } => format!("cat {q0} {p0} {phase}"),
                        StateKind::Eigenstate { n } => format!("eigenstate {n}"),
                    };
                    match &m.potential {
                        Some(c) => out.push_str(&format!(
                            "member = {} {} potential {}\n",
                            m.weight,
                            kind,
                            fmt_coeffs(c)
                        )),
                        None => out.push_str(&format!("member = {} {}\n", m.weight, kind)),
                    }
                }
            }
        }
        if let Some(w) = self.omega {
            out.push_str(&format!("omega = {w}\n"));
        }
        out.push_str("\n[grid]\n");
        out.push_str(&format!(
            "q_min = {}\nq_max = {}\np_min = {}\np_max = {}\nnq = {}\nnp = {}\n",
            self.q_min, self.q_max, self.p_min, self.p_max, self.nq, self.np
        ));
        out.push_str("\n[evolution]\n");
        out.push_str(&format!("t_final = {}\n", self.t_final));
        match self.dt {
            Some(dt) => out.push_str(&format!("dt = {dt}\n")),
            None => out.push_str("dt = auto\n"),
        }
        out.push_str(&format!("epsilon_level = {}\n", self.epsilon_level));
        out.push_str(&format!("min_levels = {}\n", self.min_levels));
        out.push_str(&format!("max_levels = {}\n", self.max_levels));
        out.push_str(&format!("snapshot_stride = {}\n", self.snapshot_stride));
        out.push_str(&format!("diagnostics_stride = {}\n", self.diagnostics_stride));
        match self.wavelet_order {
            Some(m) => out.push_str(&format!("wavelet_order = {m}\n")),
            None => out.push_str("wavelet_order = auto\n"),
        }
        out.push_str(&format!("operator_threshold = {}\n", self.operator_threshold));
        out.push_str(&format!("coarsest_level = {}\n", self.coarsest_level));
        out.push_str(&format!("boundary_guard = {}\n", self.boundary_guard));
        out.push_str("\n[output]\n");
        out.push_str(&format!("directory = {}\n", self.directory));
        out
    }

    pub fn grid(&self) -> Result<PhaseSpaceGrid, SolverError> {
        PhaseSpaceGrid::new(
            self.q_min, self.q_max, self.p_min, self.p_max, self.nq, self.np, self.hbar,
        )
        .map_err(SolverError::PhaseSpace)
    }

    /// Square grid at a given per-axis level, for resolution sweeps.
    pub fn grid_at_level(&self, level: usize) -> Result<PhaseSpaceGrid, SolverError> {
        let n = 1usize << level;
        PhaseSpaceGrid::new(
            self.q_min, self.q_max, self.p_min, self.p_max, n, n, self.hbar,
        )
        .map_err(SolverError::PhaseSpace)
    }

    pub fn potential_poly(&self) -> PolynomialPotential {
        PolynomialPotential::new(self.potential.clone())
    }

    pub fn lindblad(&self) -> LindbladParams {
        LindbladParams::new(self.gamma, self.diffusion)
    }

    /// Reference-oscillator frequency: explicit, else from the quadratic
    /// term of the shared potential, else one.
    pub fn reference_omega(&self) -> f64 {
        if let Some(w) = self.omega {
            return w;
        }
        let c2 = self.potential.get(2).copied().unwrap_or(0.0);
        if c2 > 0.0 && self.mass.is_finite() {
            (2.0 * c2 / self.mass).sqrt()
        } else {
            1.0
        }
    }

    /// Highest derivative order the evolution operator needs.
    pub fn max_derivative_order(&self) -> usize {
        let poly = self.potential_poly();
        let mut n_max = if self.mass.is_finite() { 1 } else { 0 };
        for term in moyal_series(&poly, self.hbar) {
            n_max = n_max.max(term.p_derivative_order);
        }
        for member_poly in self.member_potentials() {
            for term in moyal_series(&member_poly, self.hbar) {
                n_max = n_max.max(term.p_derivative_order);
            }
        }
        if self.gamma > 0.0 {
            n_max = n_max.max(1);
        }
        if self.diffusion > 0.0 {
            n_max = n_max.max(2);
        }
        n_max.max(1)
    }

    fn member_potentials(&self) -> Vec<PolynomialPotential> {
        match &self.initial {
            InitialSpec::Pure(_) => Vec::new(),
            InitialSpec::Mixture(members) => members
                .iter()
                .filter_map(|m| m.potential.as_ref())
                .map(|c| PolynomialPotential::new(c.clone()))
                .collect(),
        }
    }

    /// The wavelet basis for this run: configured order, or the minimal
    /// order passing the regularity gate for every needed derivative.
    pub fn basis(&self) -> Result<FilterPair, SolverError> {
        let order = self
            .wavelet_order
            .unwrap_or_else(|| default_basis_order(self.max_derivative_order()));
        daubechies_filters(order).map_err(SolverError::Wavelet)
    }

    pub fn evolution(&self) -> EvolutionConfig {
        EvolutionConfig {
            t_final: self.t_final,
            dt: self.dt,
            epsilon_level: self.epsilon_level,
            min_levels: self.min_levels,
            max_levels: self.max_levels,
            snapshot_stride: self.snapshot_stride,
            diagnostics_stride: self.diagnostics_stride,
            boundary_guard: self.boundary_guard,
        }
    }

    fn build_state(
        &self,
        kind: &StateKind,
        grid: &PhaseSpaceGrid,
    ) -> Result<WignerState, SolverError> {
        let omega = self.reference_omega();
        let mass = if self.mass.is_finite() { self.mass } else { 1.0 };
        let psi = match kind {
            StateKind::Gaussian => Wavefunction::coherent(grid, 0.0, 0.0, mass, omega, self.hbar),
            StateKind::Coherent { q0, p0 } => {
                Wavefunction::coherent(grid, *q0, *p0, mass, omega, self.hbar)
            }
            StateKind::Cat { q0, p0, phase } => {
                Wavefunction::cat(grid, *q0, *p0, *phase, mass, omega, self.hbar)
            }
            StateKind::Eigenstate { n } => {
                Wavefunction::eigenstate(grid, *n, mass, omega, self.hbar)
            }
        };
        weyl_transform_guarded(&psi, grid, self.boundary_guard).map_err(SolverError::PhaseSpace)
    }

    /// Materialize the initial ensemble on a grid (single-member for pure
    /// initial states).
    pub fn initial_ensemble(&self, grid: &PhaseSpaceGrid) -> Result<WignerEnsemble, SolverError> {
        let shared = self.potential_poly();
        match &self.initial {
            InitialSpec::Pure(kind) => {
                let state = self.build_state(kind, grid)?;
                Ok(WignerEnsemble::single(state, shared))
            }
            InitialSpec::Mixture(specs) => {
                let members = specs
                    .iter()
                    .map(|spec| {
                        let state = self.build_state(&spec.kind, grid)?;
                        let potential = spec
                            .potential
                            .as_ref()
                            .map(|c| PolynomialPotential::new(c.clone()))
                            .unwrap_or_else(|| shared.clone());
                        Ok(EnsembleMember {
                            weight: spec.weight,
                            state,
                            potential,
                        })
                    })
                    .collect::<Result<Vec<_>, SolverError>>()?;
                WignerEnsemble::new(members)
                    .map_err(|e: EnsembleError| SolverError::Ensemble(e))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "\
[physics]
potential = 0 0 0.5

[grid]
q_min = -8
q_max = 8
p_min = -8
p_max = 8
nq = 128
np = 128
";

    #[test]
    fn minimal_config_fills_defaults() {
        let cfg = parse_config(MINIMAL).unwrap();
        assert_eq!(cfg.potential, vec![0.0, 0.0, 0.5]);
        assert_eq!(cfg.mass, 1.0);
        assert_eq!(cfg.hbar, 1.0);
        assert!(cfg.dt.is_none());
        assert_eq!(cfg.initial, InitialSpec::Pure(StateKind::Gaussian));
        assert_eq!(cfg.directory, "out");
    }

    #[test]
    fn weight_sum_violation_names_the_constraint() {
        let text = format!(
            "{MINIMAL}\n[initial]\nstate = mixture\nmember = 0.6 coherent 1 0\nmember = 0.5 coherent -1 0\n"
        );
        let err = parse_config(&text).unwrap_err();
        let all = err.to_string();
        assert!(all.contains("\u{3a3} w_i = 1"), "message: {all}");
    }

    #[test]
    fn power_of_two_violation_reported_with_line() {
        let text = MINIMAL.replace("nq = 128", "nq = 300");
        let err = parse_config(&text).unwrap_err();
        assert!(err
            .violations
            .iter()
            .any(|v| v.message.contains("power of two") && v.line > 0));
    }

    #[test]
    fn unknown_keys_and_sections_are_collected() {
        let text = format!("{MINIMAL}\nbogus = 1\n[nonsense]\nx = 2\n[physics]\nwhatever = 3\n");
        let err = parse_config(&text).unwrap_err();
        assert!(err.violations.len() >= 3, "violations: {err}");
    }

    #[test]
    fn all_violations_reported_not_just_first() {
        let text = "\
[physics]
potential = abc
hbar = -1

[grid]
nq = 100
np = 12
q_min = 5
q_max = -5
";
        let err = parse_config(text).unwrap_err();
        assert!(err.violations.len() >= 5, "got {} violations: {err}", err.violations.len());
    }

    #[test]
    fn round_trip_is_lossless() {
        let text = format!(
            "{MINIMAL}\n[initial]\nstate = cat\nq0 = 2.5\np0 = 0\nphase = 0.5\n\n[evolution]\nt_final = 3\ndt = 0.001\nwavelet_order = 6\n\n[output]\ndirectory = results\n"
        );
        let cfg = parse_config(&text).unwrap();
        let cfg2 = parse_config(&cfg.to_text()).unwrap();
        assert_eq!(cfg, cfg2);
    }

    #[test]
    fn mixture_round_trip() {
        let text = format!(
            "{MINIMAL}\n[initial]\nstate = mixture\nmember = 0.5 coherent 1 0\nmember = 0.5 eigenstate 1 potential 0 0 1.125\n"
        );
        let cfg = parse_config(&text).unwrap();
        let cfg2 = parse_config(&cfg.to_text()).unwrap();
        assert_eq!(cfg, cfg2);
        match &cfg.initial {
            InitialSpec::Mixture(m) => {
                assert_eq!(m.len(), 2);
                assert_eq!(m[1].potential, Some(vec![0.0, 0.0, 1.125]));
            }
            other => panic!("expected mixture, got {other:?}"),
        }
    }

    #[test]
    fn reference_omega_derived_from_potential() {
        let cfg = parse_config(MINIMAL).unwrap();
        assert!((cfg.reference_omega() - 1.0).abs() < 1e-15);
        let text = MINIMAL.replace("potential = 0 0 0.5", "potential = 0 0 2");
        let cfg = parse_config(&text).unwrap();
        assert!((cfg.reference_omega() - 2.0).abs() < 1e-15);
    }

    #[test]
    fn initial_ensemble_builds_on_grid() {
        let cfg = parse_config(MINIMAL).unwrap();
        let grid = cfg.grid().unwrap();
        let ensemble = cfg.initial_ensemble(&grid).unwrap();
        assert_eq!(ensemble.members().len(), 1);
        assert!((ensemble.mix().norm() - 1.0).abs() < 1e-6);
    }
}
