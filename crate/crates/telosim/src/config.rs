//! Run configuration: the TOML schema shared by the command line and the
//! embedding interface.
//!
//! Parsing validates every field and collects every violation instead of
//! stopping at the first. The resolved configuration serializes back to
//! TOML losslessly, with documented defaults filled in, and that resolved
//! text is what run manifests hash.

use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;
use toml::value::{Table, Value};

use crate::model::{BirthRate, ModelError, ModelSpec, RenewalScheme};

/// Stand-in for a configured constant birth rate of zero. The smallest
/// wait it can produce is near 1e297 time units, so no division fires
/// before any representable horizon.
pub const ZERO_RATE_SUBSTITUTE: f64 = 1e-300;

const MAX_BINS: usize = 4096;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("configuration is not valid TOML: {0}")]
    Syntax(#[from] toml::de::Error),
    #[error("invalid configuration:\n  {}", .0.join("\n  "))]
    Invalid(Vec<String>),
}

impl ConfigError {
    /// All violation messages, empty for the non-schema variants.
    pub fn violations(&self) -> &[String] {
        match self {
            ConfigError::Invalid(list) => list,
            _ => &[],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    Simulate,
    Estimate,
    AuxParticle,
    CrossValidate,
    BellmanHarris,
    VerifyAssumptions,
    EstimateProfile,
}

impl Command {
    pub const ALL: [Command; 7] = [
        Command::Simulate,
        Command::Estimate,
        Command::AuxParticle,
        Command::CrossValidate,
        Command::BellmanHarris,
        Command::VerifyAssumptions,
        Command::EstimateProfile,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Estimate => "estimate",
            Command::AuxParticle => "aux-particle",
            Command::CrossValidate => "cross-validate",
            Command::BellmanHarris => "bellman-harris",
            Command::VerifyAssumptions => "verify-assumptions",
            Command::EstimateProfile => "estimate-profile",
        }
    }

    pub fn from_name(name: &str) -> Option<Command> {
        Command::ALL.into_iter().find(|c| c.name() == name)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum PresetChoice {
    Model1 { gamma: f64 },
    Model2 { q0: f64, x_scale: f64, p: f64 },
}

#[derive(Clone, Debug, PartialEq)]
pub enum BirthChoice {
    Constant { c: f64 },
    AgeLinear,
    CustomPoly { coeffs: Vec<f64> },
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelSection {
    pub preset: PresetChoice,
    pub k: usize,
    pub delta: f64,
    pub big_delta: f64,
    pub birth: BirthChoice,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunSection {
    /// Optional declared command; when present, dispatch requires it to
    /// match the invoked subcommand.
    pub command: Option<Command>,
    pub horizon: f64,
    pub replicates: usize,
    pub cap: usize,
    pub seed: u64,
    pub t_grid: Vec<f64>,
    /// State bins per coordinate, then age bins.
    pub bins: [usize; 2],
    pub t_burn: f64,
    /// Initial telomere length, applied to every coordinate.
    pub init_x: f64,
    pub init_age: f64,
    /// Worker threads; 0 means all available cores.
    pub threads: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PsiSection {
    pub d_psi: u32,
    pub lambda0: f64,
    /// Return level `l` scaling the escape box.
    pub return_level: f64,
    pub safety_margin: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct VerifySection {
    pub d: Option<u32>,
    /// Renewal box override `[0, hi]`.
    pub k_renew: Option<[f64; 2]>,
    pub epsilon0_target: Option<f64>,
    pub samples: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub model: ModelSection,
    pub run: RunSection,
    pub psi: PsiSection,
    pub verify: VerifySection,
}

impl RunConfig {
    pub fn parse_path(path: &Path) -> Result<RunConfig, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        RunConfig::parse_str(&text)
    }

    pub fn parse_str(text: &str) -> Result<RunConfig, ConfigError> {
        let root: Table = toml::from_str(text)?;
        parse_root(&root)
    }

    /// Construct the model; preset validity failures surface here, not at
    /// parse time.
    pub fn build_model(&self) -> Result<ModelSpec, ModelError> {
        let birth = match &self.model.birth {
            BirthChoice::AgeLinear => BirthRate::age_linear(),
            BirthChoice::Constant { c } => {
                BirthRate::constant(if *c == 0.0 { ZERO_RATE_SUBSTITUTE } else { *c })?
            }
            BirthChoice::CustomPoly { coeffs } => BirthRate::poly(coeffs.clone())?,
        };
        let m = &self.model;
        match m.preset {
            PresetChoice::Model1 { gamma } => {
                ModelSpec::model1(m.k, m.delta, m.big_delta, gamma, birth)
            }
            PresetChoice::Model2 { q0, x_scale, p } => {
                ModelSpec::model2(m.k, m.delta, m.big_delta, q0, x_scale, p, birth)
            }
        }
    }

    /// Renewal scheme for the verify command: the model's own scheme with
    /// any configured overrides applied.
    pub fn resolved_scheme(&self, model: &ModelSpec) -> RenewalScheme {
        let base = *model.renewal();
        RenewalScheme {
            d: self.verify.d.unwrap_or(base.d),
            eps0: self.verify.epsilon0_target.unwrap_or(base.eps0),
            b_max: base.b_max,
            renew_hi: self.verify.k_renew.map_or(base.renew_hi, |b| b[1]),
        }
    }

    /// Serialize the resolved configuration: fixed key order, defaults
    /// written out, optional verify overrides kept optional.
    pub fn to_toml(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "[model]");
        let (name, extra) = match &self.model.preset {
            PresetChoice::Model1 { gamma } => ("model1", format!("gamma = {gamma:?}")),
            PresetChoice::Model2 { q0, x_scale, p } => (
                "model2",
                format!("q_params = {{ q0 = {q0:?}, x_scale = {x_scale:?}, p = {p:?} }}"),
            ),
        };
        let _ = writeln!(s, "preset = \"{name}\"");
        let _ = writeln!(s, "k = {}", self.model.k);
        let _ = writeln!(s, "delta = {:?}", self.model.delta);
        let _ = writeln!(s, "Delta = {:?}", self.model.big_delta);
        let _ = writeln!(s, "{extra}");
        let _ = writeln!(s, "\n[model.birth]");
        match &self.model.birth {
            BirthChoice::AgeLinear => {
                let _ = writeln!(s, "kind = \"age_linear\"");
            }
            BirthChoice::Constant { c } => {
                let _ = writeln!(s, "kind = \"constant\"");
                let _ = writeln!(s, "coeffs = [{c:?}]");
            }
            BirthChoice::CustomPoly { coeffs } => {
                let _ = writeln!(s, "kind = \"custom_poly\"");
                let _ = writeln!(s, "coeffs = {}", float_list(coeffs));
            }
        }
        let _ = writeln!(s, "\n[run]");
        if let Some(cmd) = self.run.command {
            let _ = writeln!(s, "command = \"{}\"", cmd.name());
        }
        let _ = writeln!(s, "horizon = {:?}", self.run.horizon);
        let _ = writeln!(s, "replicates = {}", self.run.replicates);
        let _ = writeln!(s, "cap = {}", self.run.cap);
        let _ = writeln!(s, "seed = {}", self.run.seed);
        let _ = writeln!(s, "t_grid = {}", float_list(&self.run.t_grid));
        let _ = writeln!(s, "bins = [{}, {}]", self.run.bins[0], self.run.bins[1]);
        let _ = writeln!(s, "t_burn = {:?}", self.run.t_burn);
        let _ = writeln!(s, "init_x = {:?}", self.run.init_x);
        let _ = writeln!(s, "init_age = {:?}", self.run.init_age);
        let _ = writeln!(s, "threads = {}", self.run.threads);
        let _ = writeln!(s, "\n[psi]");
        let _ = writeln!(s, "d_psi = {}", self.psi.d_psi);
        let _ = writeln!(s, "lambda0 = {:?}", self.psi.lambda0);
        let _ = writeln!(s, "L = {:?}", self.psi.return_level);
        let _ = writeln!(s, "safety_margin = {:?}", self.psi.safety_margin);
        let _ = writeln!(s, "\n[verify]");
        if let Some(d) = self.verify.d {
            let _ = writeln!(s, "D = {d}");
        }
        if let Some(b) = self.verify.k_renew {
            let _ = writeln!(s, "K_renew = [{:?}, {:?}]", b[0], b[1]);
        }
        if let Some(e) = self.verify.epsilon0_target {
            let _ = writeln!(s, "epsilon0_target = {e:?}");
        }
        let _ = writeln!(s, "samples = {}", self.verify.samples);
        s
    }
}

fn float_list(values: &[f64]) -> String {
    let items: Vec<String> = values.iter().map(|v| format!("{v:?}")).collect();
    format!("[{}]", items.join(", "))
}

// ── field extraction ──

#[derive(Default)]
struct Violations {
    list: Vec<String>,
}

impl Violations {
    fn push(&mut self, key: &str, msg: impl std::fmt::Display) {
        self.list.push(format!("{key}: {msg}"));
    }
}

fn reject_unknown(v: &mut Violations, table: &Table, path: &str, known: &[&str]) {
    for key in table.keys() {
        if !known.contains(&key.as_str()) {
            v.push(&format!("{path}{key}"), "unknown key");
        }
    }
}

fn section<'a>(v: &mut Violations, root: &'a Table, name: &str) -> Option<&'a Table> {
    match root.get(name) {
        None => None,
        Some(Value::Table(t)) => Some(t),
        Some(_) => {
            v.push(name, "must be a table");
            None
        }
    }
}

fn get_f64(v: &mut Violations, t: &Table, path: &str, key: &str) -> Option<f64> {
    match t.get(key) {
        None => None,
        Some(Value::Float(x)) => Some(*x),
        Some(Value::Integer(i)) => Some(*i as f64),
        Some(_) => {
            v.push(&format!("{path}.{key}"), "must be a number");
            None
        }
    }
}

fn get_int(v: &mut Violations, t: &Table, path: &str, key: &str) -> Option<i64> {
    match t.get(key) {
        None => None,
        Some(Value::Integer(i)) => Some(*i),
        Some(_) => {
            v.push(&format!("{path}.{key}"), "must be an integer");
            None
        }
    }
}

fn get_str<'a>(v: &mut Violations, t: &'a Table, path: &str, key: &str) -> Option<&'a str> {
    match t.get(key) {
        None => None,
        Some(Value::String(s)) => Some(s),
        Some(_) => {
            v.push(&format!("{path}.{key}"), "must be a string");
            None
        }
    }
}

fn get_f64_array(v: &mut Violations, t: &Table, path: &str, key: &str) -> Option<Vec<f64>> {
    let full = format!("{path}.{key}");
    match t.get(key) {
        None => None,
        Some(Value::Array(items)) => {
            let mut out = Vec::with_capacity(items.len());
            for (i, item) in items.iter().enumerate() {
                match item {
                    Value::Float(x) => out.push(*x),
                    Value::Integer(n) => out.push(*n as f64),
                    _ => {
                        v.push(&full, format!("element {i} must be a number"));
                        return None;
                    }
                }
            }
            Some(out)
        }
        Some(_) => {
            v.push(&full, "must be an array of numbers");
            None
        }
    }
}

fn positive(v: &mut Violations, path: &str, key: &str, value: f64) -> Option<f64> {
    if value.is_finite() && value > 0.0 {
        Some(value)
    } else {
        v.push(&format!("{path}.{key}"), format!("must be positive and finite, got {value}"));
        None
    }
}

fn nonnegative(v: &mut Violations, path: &str, key: &str, value: f64) -> Option<f64> {
    if value.is_finite() && value >= 0.0 {
        Some(value)
    } else {
        v.push(&format!("{path}.{key}"), format!("must be nonnegative and finite, got {value}"));
        None
    }
}

fn int_range(
    v: &mut Violations,
    path: &str,
    key: &str,
    value: i64,
    lo: i64,
    hi: i64,
) -> Option<i64> {
    if (lo..=hi).contains(&value) {
        Some(value)
    } else {
        v.push(&format!("{path}.{key}"), format!("must be in {lo}..={hi}, got {value}"));
        None
    }
}

// ── section parsers ──

fn parse_root(root: &Table) -> Result<RunConfig, ConfigError> {
    let mut v = Violations::default();
    reject_unknown(&mut v, root, "", &["model", "run", "psi", "verify"]);

    let model = match section(&mut v, root, "model") {
        Some(t) => parse_model(&mut v, t),
        None => {
            if !root.contains_key("model") {
                v.push("model", "section is required");
            }
            None
        }
    };
    let big_delta = model.as_ref().map(|m| m.big_delta);
    let run = section(&mut v, root, "run")
        .map(|t| parse_run(&mut v, t, big_delta))
        .unwrap_or_else(|| default_run(big_delta));
    let psi = section(&mut v, root, "psi")
        .map(|t| parse_psi(&mut v, t))
        .unwrap_or_else(default_psi);
    let verify = section(&mut v, root, "verify")
        .map(|t| parse_verify(&mut v, t))
        .unwrap_or_else(default_verify);

    match (model, v.list.is_empty()) {
        (Some(model), true) => Ok(RunConfig { model, run, psi, verify }),
        _ => Err(ConfigError::Invalid(v.list)),
    }
}

fn parse_model(v: &mut Violations, t: &Table) -> Option<ModelSection> {
    reject_unknown(
        v,
        t,
        "model.",
        &["preset", "k", "delta", "Delta", "gamma", "q_params", "birth"],
    );
    let path = "model";

    let preset_name = match get_str(v, t, path, "preset") {
        Some(s) => Some(s.to_owned()),
        None => {
            if !t.contains_key("preset") {
                v.push("model.preset", "required, one of \"model1\" or \"model2\"");
            }
            None
        }
    };

    let k = match get_int(v, t, path, "k") {
        Some(i) => int_range(v, path, "k", i, 1, 32).map(|i| i as usize),
        None => {
            if !t.contains_key("k") {
                v.push("model.k", "required");
            }
            None
        }
    };
    let delta = match get_f64(v, t, path, "delta") {
        Some(x) => positive(v, path, "delta", x),
        None => {
            if !t.contains_key("delta") {
                v.push("model.delta", "required");
            }
            None
        }
    };
    let big_delta = match get_f64(v, t, path, "Delta") {
        Some(x) => positive(v, path, "Delta", x),
        None => {
            if !t.contains_key("Delta") {
                v.push("model.Delta", "required");
            }
            None
        }
    };
    if let (Some(d), Some(dd)) = (delta, big_delta) {
        if dd <= d {
            v.push("model.Delta", format!("must exceed model.delta, got {dd} <= {d}"));
        }
    }

    let gamma = get_f64(v, t, path, "gamma");
    let q_params = section(v, t, "q_params").map(|q| {
        reject_unknown(v, q, "model.q_params.", &["q0", "x_scale", "p"]);
        let qp = "model.q_params";
        let q0 = get_f64(v, q, qp, "q0").and_then(|x| {
            if x.is_finite() && x > 0.0 && x <= 1.0 {
                Some(x)
            } else {
                v.push("model.q_params.q0", format!("must be in (0, 1], got {x}"));
                None
            }
        });
        let x_scale = get_f64(v, q, qp, "x_scale").and_then(|x| positive(v, qp, "x_scale", x));
        let p = get_f64(v, q, qp, "p").and_then(|x| positive(v, qp, "p", x));
        (q0, x_scale, p)
    });

    let preset = match preset_name.as_deref() {
        Some("model1") => {
            if q_params.is_some() {
                v.push("model.q_params", "only valid for preset \"model2\"");
            }
            match gamma {
                Some(g) if g.is_finite() && g > 0.0 && g < 1.0 => {
                    Some(PresetChoice::Model1 { gamma: g })
                }
                Some(g) => {
                    v.push("model.gamma", format!("must be in (0, 1), got {g}"));
                    None
                }
                None => {
                    v.push("model.gamma", "required for preset \"model1\"");
                    None
                }
            }
        }
        Some("model2") => {
            if gamma.is_some() {
                v.push("model.gamma", "only valid for preset \"model1\"");
            }
            match q_params {
                Some((Some(q0), Some(x_scale), Some(p))) => {
                    Some(PresetChoice::Model2 { q0, x_scale, p })
                }
                Some(_) => None,
                None => {
                    v.push(
                        "model.q_params",
                        "required for preset \"model2\": { q0, x_scale, p }",
                    );
                    None
                }
            }
        }
        Some(other) => {
            v.push("model.preset", format!("unknown preset \"{other}\""));
            None
        }
        None => None,
    };

    let birth = match section(v, t, "birth") {
        Some(b) => parse_birth(v, b),
        None => Some(BirthChoice::AgeLinear),
    };

    Some(ModelSection {
        preset: preset?,
        k: k?,
        delta: delta?,
        big_delta: big_delta?,
        birth: birth?,
    })
}

fn parse_birth(v: &mut Violations, t: &Table) -> Option<BirthChoice> {
    reject_unknown(v, t, "model.birth.", &["kind", "coeffs"]);
    let kind = get_str(v, t, "model.birth", "kind").map(str::to_owned);
    let coeffs = get_f64_array(v, t, "model.birth", "coeffs");
    for c in coeffs.iter().flatten() {
        if !c.is_finite() || *c < 0.0 {
            v.push("model.birth.coeffs", format!("coefficients must be nonnegative, got {c}"));
            return None;
        }
    }
    match kind.as_deref().unwrap_or("age_linear") {
        "age_linear" => {
            if coeffs.is_some_and(|c| !c.is_empty()) {
                v.push("model.birth.coeffs", "not used by kind \"age_linear\"");
                return None;
            }
            Some(BirthChoice::AgeLinear)
        }
        "constant" => match coeffs.as_deref() {
            Some([c]) => Some(BirthChoice::Constant { c: *c }),
            _ => {
                v.push("model.birth.coeffs", "kind \"constant\" needs exactly one coefficient");
                None
            }
        },
        "custom_poly" => match coeffs {
            Some(c) if !c.is_empty() && c.iter().sum::<f64>() > 0.0 => {
                Some(BirthChoice::CustomPoly { coeffs: c })
            }
            _ => {
                v.push(
                    "model.birth.coeffs",
                    "kind \"custom_poly\" needs coefficients with a positive sum",
                );
                None
            }
        },
        other => {
            v.push(
                "model.birth.kind",
                format!(
                    "unknown kind \"{other}\", expected constant, age_linear, or custom_poly"
                ),
            );
            None
        }
    }
}

fn default_run(big_delta: Option<f64>) -> RunSection {
    RunSection {
        command: None,
        horizon: 1.0,
        replicates: 100,
        cap: 100_000,
        seed: 0,
        t_grid: Vec::new(),
        bins: [32, 64],
        t_burn: 0.5,
        init_x: big_delta.unwrap_or(0.0),
        init_age: 0.0,
        threads: 0,
    }
}

fn parse_run(v: &mut Violations, t: &Table, big_delta: Option<f64>) -> RunSection {
    reject_unknown(
        v,
        t,
        "run.",
        &[
            "command",
            "horizon",
            "replicates",
            "cap",
            "seed",
            "t_grid",
            "bins",
            "t_burn",
            "init_x",
            "init_age",
            "threads",
        ],
    );
    let path = "run";
    let mut out = default_run(big_delta);

    if let Some(name) = get_str(v, t, path, "command") {
        match Command::from_name(name) {
            Some(cmd) => out.command = Some(cmd),
            None => v.push("run.command", format!("unknown command \"{name}\"")),
        }
    }
    if let Some(x) = get_f64(v, t, path, "horizon") {
        if let Some(x) = positive(v, path, "horizon", x) {
            out.horizon = x;
        }
    }
    out.t_burn = out.horizon / 2.0;
    if let Some(i) = get_int(v, t, path, "replicates") {
        if let Some(i) = int_range(v, path, "replicates", i, 1, 1_000_000_000) {
            out.replicates = i as usize;
        }
    }
    if let Some(i) = get_int(v, t, path, "cap") {
        if let Some(i) = int_range(v, path, "cap", i, 1, i64::MAX) {
            out.cap = i as usize;
        }
    }
    if let Some(i) = get_int(v, t, path, "seed") {
        if i >= 0 {
            out.seed = i as u64;
        } else {
            v.push("run.seed", format!("must be nonnegative, got {i}"));
        }
    }
    if let Some(grid) = get_f64_array(v, t, path, "t_grid") {
        if grid.iter().any(|x| !x.is_finite() || *x < 0.0) {
            v.push("run.t_grid", "times must be nonnegative and finite");
        } else if grid.windows(2).any(|w| w[0] >= w[1]) {
            v.push("run.t_grid", "times must be strictly increasing");
        } else {
            out.t_grid = grid;
        }
    }
    if let Some(Value::Array(items)) = t.get("bins") {
        let ints: Vec<i64> = items
            .iter()
            .filter_map(|x| if let Value::Integer(i) = x { Some(*i) } else { None })
            .collect();
        if ints.len() == 2 && items.len() == 2 {
            let lo = 2;
            let hi = MAX_BINS as i64;
            if ints.iter().all(|b| (lo..=hi).contains(b)) {
                out.bins = [ints[0] as usize, ints[1] as usize];
            } else {
                v.push("run.bins", format!("each count must be in {lo}..={hi}, got {ints:?}"));
            }
        } else {
            v.push("run.bins", "must be [state_bins, age_bins]");
        }
    } else if t.contains_key("bins") {
        v.push("run.bins", "must be an array of two integers");
    }
    if let Some(x) = get_f64(v, t, path, "t_burn") {
        if let Some(x) = nonnegative(v, path, "t_burn", x) {
            if x < out.horizon {
                out.t_burn = x;
            } else {
                v.push("run.t_burn", format!("must be below run.horizon, got {x}"));
            }
        }
    }
    if let Some(x) = get_f64(v, t, path, "init_x") {
        if let Some(x) = nonnegative(v, path, "init_x", x) {
            out.init_x = x;
        }
    }
    if let Some(x) = get_f64(v, t, path, "init_age") {
        if let Some(x) = nonnegative(v, path, "init_age", x) {
            out.init_age = x;
        }
    }
    if let Some(i) = get_int(v, t, path, "threads") {
        if let Some(i) = int_range(v, path, "threads", i, 0, 1024) {
            out.threads = i as usize;
        }
    }
    out
}

fn default_psi() -> PsiSection {
    PsiSection { d_psi: 2, lambda0: 1e-3, return_level: 1.0, safety_margin: 0.05 }
}

fn parse_psi(v: &mut Violations, t: &Table) -> PsiSection {
    reject_unknown(v, t, "psi.", &["d_psi", "lambda0", "L", "safety_margin"]);
    let path = "psi";
    let mut out = default_psi();
    if let Some(i) = get_int(v, t, path, "d_psi") {
        if let Some(i) = int_range(v, path, "d_psi", i, 1, 8) {
            out.d_psi = i as u32;
        }
    }
    if let Some(x) = get_f64(v, t, path, "lambda0") {
        if let Some(x) = positive(v, path, "lambda0", x) {
            out.lambda0 = x;
        }
    }
    if let Some(x) = get_f64(v, t, path, "L") {
        if x.is_finite() && x >= 1.0 {
            out.return_level = x;
        } else {
            v.push("psi.L", format!("must be at least 1, got {x}"));
        }
    }
    if let Some(x) = get_f64(v, t, path, "safety_margin") {
        if let Some(x) = nonnegative(v, path, "safety_margin", x) {
            out.safety_margin = x;
        }
    }
    out
}

fn default_verify() -> VerifySection {
    VerifySection { d: None, k_renew: None, epsilon0_target: None, samples: 100_000 }
}

fn parse_verify(v: &mut Violations, t: &Table) -> VerifySection {
    reject_unknown(v, t, "verify.", &["D", "K_renew", "epsilon0_target", "samples"]);
    let path = "verify";
    let mut out = default_verify();
    if let Some(i) = get_int(v, t, path, "D") {
        if let Some(i) = int_range(v, path, "D", i, 1, 64) {
            out.d = Some(i as u32);
        }
    }
    if let Some(b) = get_f64_array(v, t, path, "K_renew") {
        if b.len() != 2 {
            v.push("verify.K_renew", "must be [lo, hi]");
        } else if b[0] != 0.0 {
            v.push("verify.K_renew", format!("lower corner must be 0, got {}", b[0]));
        } else if !(b[1] > 0.0) || !b[1].is_finite() {
            v.push("verify.K_renew", format!("upper corner must be positive, got {}", b[1]));
        } else {
            out.k_renew = Some([b[0], b[1]]);
        }
    }
    if let Some(x) = get_f64(v, t, path, "epsilon0_target") {
        if let Some(x) = positive(v, path, "epsilon0_target", x) {
            out.epsilon0_target = Some(x);
        }
    }
    if let Some(i) = get_int(v, t, path, "samples") {
        if let Some(i) = int_range(v, path, "samples", i, 100, 100_000_000) {
            out.samples = i as usize;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL_MODEL2: &str = r#"
[model]
preset = "model2"
k = 1
delta = 1.0
Delta = 100.0
q_params = { q0 = 0.97, x_scale = 50.0, p = 2.0 }
"#;

    #[test]
    fn minimal_config_fills_documented_defaults() {
        let cfg = RunConfig::parse_str(MINIMAL_MODEL2).unwrap();
        assert_eq!(cfg.run.horizon, 1.0);
        assert_eq!(cfg.run.replicates, 100);
        assert_eq!(cfg.run.cap, 100_000);
        assert_eq!(cfg.run.seed, 0);
        assert_eq!(cfg.run.bins, [32, 64]);
        assert_eq!(cfg.run.t_burn, 0.5);
        assert_eq!(cfg.run.init_x, 100.0);
        assert_eq!(cfg.run.threads, 0);
        assert_eq!(cfg.model.birth, BirthChoice::AgeLinear);
        assert_eq!(cfg.psi.d_psi, 2);
        assert_eq!(cfg.psi.lambda0, 1e-3);
        assert_eq!(cfg.verify.samples, 100_000);
        assert_eq!(cfg.verify.d, None);

        let model = cfg.build_model().unwrap();
        assert_eq!(model.k(), 1);
        let scheme = cfg.resolved_scheme(&model);
        assert_eq!(scheme.d, model.renewal().d);
        assert_eq!(scheme.eps0, model.renewal().eps0);
    }

    #[test]
    fn resolved_form_round_trips() {
        let text = format!(
            "{MINIMAL_MODEL2}
[run]
command = \"estimate\"
horizon = 7.5
seed = 42
t_grid = [1.0, 2.0, 3.5]

[verify]
D = 2
epsilon0_target = 3.9
"
        );
        let cfg = RunConfig::parse_str(&text).unwrap();
        assert_eq!(cfg.run.command, Some(Command::Estimate));
        assert_eq!(cfg.run.t_burn, 3.75);
        let again = RunConfig::parse_str(&cfg.to_toml()).unwrap();
        assert_eq!(again, cfg);
        assert_eq!(again.to_toml(), cfg.to_toml());
    }

    #[test]
    fn violations_are_collected_not_truncated() {
        let text = r#"
[model]
preset = "model2"
k = 1
delta = -1.0
Delta_typo = 100.0
q_params = { q0 = 0.97, x_scale = 50.0, p = 2.0 }

[run]
replicates = 0
"#;
        let err = RunConfig::parse_str(text).unwrap_err();
        let all = err.violations().join("\n");
        assert!(all.contains("model.delta"), "{all}");
        assert!(all.contains("model.Delta_typo: unknown key"), "{all}");
        assert!(all.contains("model.Delta: required"), "{all}");
        assert!(all.contains("run.replicates"), "{all}");
        assert!(err.violations().len() >= 4, "{all}");
    }

    #[test]
    fn preset_parameter_cross_rules() {
        let text = r#"
[model]
preset = "model1"
k = 2
delta = 1.0
Delta = 100.0
gamma = 0.2
"#;
        let cfg = RunConfig::parse_str(text).unwrap();
        assert_eq!(cfg.model.preset, PresetChoice::Model1 { gamma: 0.2 });

        let swapped = text.replace("preset = \"model1\"", "preset = \"model2\"");
        let err = RunConfig::parse_str(&swapped).unwrap_err();
        let all = err.violations().join("\n");
        assert!(all.contains("model.gamma: only valid"), "{all}");
        assert!(all.contains("model.q_params: required"), "{all}");

        let bad_gamma = text.replace("gamma = 0.2", "gamma = 1.0");
        let err = RunConfig::parse_str(&bad_gamma).unwrap_err();
        assert!(err.violations()[0].contains("model.gamma"), "{err}");
    }

    #[test]
    fn birth_kinds_validate_their_coefficients() {
        let with_birth = |body: &str| format!("{MINIMAL_MODEL2}\n[model.birth]\n{body}");
        let cfg = RunConfig::parse_str(&with_birth("kind = \"constant\"\ncoeffs = [0.8]"))
            .unwrap();
        assert_eq!(cfg.model.birth, BirthChoice::Constant { c: 0.8 });

        let zero = RunConfig::parse_str(&with_birth("kind = \"constant\"\ncoeffs = [0.0]"))
            .unwrap();
        zero.build_model().unwrap();

        let err = RunConfig::parse_str(&with_birth("kind = \"constant\"\ncoeffs = [1.0, 2.0]"))
            .unwrap_err();
        assert!(err.violations()[0].contains("exactly one coefficient"), "{err}");

        let err = RunConfig::parse_str(&with_birth("kind = \"age_linear\"\ncoeffs = [1.0]"))
            .unwrap_err();
        assert!(err.violations()[0].contains("not used"), "{err}");

        let cfg = RunConfig::parse_str(&with_birth(
            "kind = \"custom_poly\"\ncoeffs = [0.5, 0.0, 2.0]",
        ))
        .unwrap();
        cfg.build_model().unwrap();

        let err = RunConfig::parse_str(&with_birth("kind = \"custom_poly\"\ncoeffs = [0.0]"))
            .unwrap_err();
        assert!(err.violations()[0].contains("positive sum"), "{err}");
    }

    #[test]
    fn run_section_guards_its_ranges() {
        let with_run = |body: &str| format!("{MINIMAL_MODEL2}\n[run]\n{body}");
        let err = RunConfig::parse_str(&with_run("t_grid = [1.0, 1.0]")).unwrap_err();
        assert!(err.violations()[0].contains("strictly increasing"), "{err}");

        let err = RunConfig::parse_str(&with_run("bins = [1, 64]")).unwrap_err();
        assert!(err.violations()[0].contains("run.bins"), "{err}");

        let err = RunConfig::parse_str(&with_run("horizon = 2.0\nt_burn = 2.0")).unwrap_err();
        assert!(err.violations()[0].contains("below run.horizon"), "{err}");

        let err = RunConfig::parse_str(&with_run("command = \"estimte\"")).unwrap_err();
        assert!(err.violations()[0].contains("unknown command"), "{err}");

        let cfg = RunConfig::parse_str(&with_run("horizon = 8.0")).unwrap();
        assert_eq!(cfg.run.t_burn, 4.0);
    }

    #[test]
    fn verify_overrides_reshape_the_scheme() {
        let text = format!(
            "{MINIMAL_MODEL2}
[verify]
D = 3
K_renew = [0.0, 150.0]
epsilon0_target = 3.9
samples = 5000
"
        );
        let cfg = RunConfig::parse_str(&text).unwrap();
        let model = cfg.build_model().unwrap();
        let scheme = cfg.resolved_scheme(&model);
        assert_eq!(scheme.d, 3);
        assert_eq!(scheme.renew_hi, 150.0);
        assert_eq!(scheme.eps0, 3.9);
        assert_eq!(scheme.b_max, model.renewal().b_max);

        let bad = text.replace("[0.0, 150.0]", "[1.0, 150.0]");
        let err = RunConfig::parse_str(&bad).unwrap_err();
        assert!(err.violations()[0].contains("lower corner"), "{err}");
    }
}
