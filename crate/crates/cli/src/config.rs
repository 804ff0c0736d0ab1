use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use fbdrift_core::pde::CascadeConfig;
use fbdrift_core::sde::{EnsembleSettings, StartSpec, TestFn};
use fbdrift_core::DriftSpec;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{CliError, CliResult};
use crate::record::digest;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Kind {
    Formbound,
    Mollify,
    PdeCascade,
    Simulate,
    Krylov,
    Flow,
    Regularity,
    Converge,
    Criticality,
}

impl Kind {
    pub const ALL: [Kind; 9] = [
        Kind::Formbound,
        Kind::Mollify,
        Kind::PdeCascade,
        Kind::Simulate,
        Kind::Krylov,
        Kind::Flow,
        Kind::Regularity,
        Kind::Converge,
        Kind::Criticality,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Kind::Formbound => "formbound",
            Kind::Mollify => "mollify",
            Kind::PdeCascade => "pde-cascade",
            Kind::Simulate => "simulate",
            Kind::Krylov => "krylov",
            Kind::Flow => "flow",
            Kind::Regularity => "regularity",
            Kind::Converge => "converge",
            Kind::Criticality => "criticality",
        }
    }

    pub fn parse(s: &str) -> Option<Kind> {
        Kind::ALL.into_iter().find(|k| k.name() == s)
    }

    /// Kinds that draw Brownian increments and therefore need a seed.
    pub fn stochastic(self) -> bool {
        matches!(
            self,
            Kind::Simulate
                | Kind::Krylov
                | Kind::Flow
                | Kind::Regularity
                | Kind::Converge
                | Kind::Criticality
        )
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FamilyName {
    #[default]
    Reference,
    HardyQuasiOptimizers,
}

fn zero_times() -> Vec<f64> {
    vec![0.0]
}

fn one() -> f64 {
    1.0
}

fn eps0() -> f64 {
    0.05
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FormboundParams {
    pub drift: DriftSpec,
    #[serde(default)]
    pub family: FamilyName,
    /// Outer radius of the family; the drift's support radius when absent.
    #[serde(default)]
    pub family_radius: Option<f64>,
    #[serde(default = "zero_times")]
    pub times: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MollifyParams {
    pub drift: DriftSpec,
    pub levels: Vec<f64>,
    #[serde(default = "eps0")]
    pub eps0: f64,
    pub tolerance: f64,
    /// Box half-width of the L2 distance; the support radius when absent.
    #[serde(default)]
    pub half_width: Option<f64>,
    #[serde(default = "one")]
    pub horizon: f64,
    #[serde(default)]
    pub family: FamilyName,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CascadeParams {
    #[serde(flatten)]
    pub cascade: CascadeConfig,
    /// Interval lengths of the product-estimate sweep; a single run when empty.
    #[serde(default)]
    pub lengths: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleParams {
    pub drift: DriftSpec,
    pub start: StartSpec,
    #[serde(default)]
    pub s: f64,
    pub t_end: f64,
    pub dt: f64,
    pub paths: usize,
    #[serde(default = "one_usize")]
    pub record_stride: usize,
    #[serde(default)]
    pub relaxed_step_check: bool,
}

fn one_usize() -> usize {
    1
}

impl EnsembleParams {
    pub fn settings(&self, seed: u64) -> EnsembleSettings {
        EnsembleSettings {
            dt: self.dt,
            paths: self.paths,
            seed,
            record_stride: self.record_stride,
            relaxed_step_check: self.relaxed_step_check,
        }
    }

    fn check(&self, block: &str, errs: &mut Vec<String>) {
        positive(block, "dt", self.dt, errs);
        positive(block, "t_end", self.t_end, errs);
        nonzero(block, "paths", self.paths, errs);
        nonzero(block, "record_stride", self.record_stride, errs);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulateParams {
    #[serde(flatten)]
    pub ensemble: EnsembleParams,
    /// Also write the raw position array and its sidecar.
    #[serde(default)]
    pub export: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KrylovParams {
    #[serde(flatten)]
    pub ensemble: EnsembleParams,
    pub h: TestFn,
    pub mu: f64,
    /// Weight of the composite functional; requires `q` and `delta_hat`.
    #[serde(default)]
    pub g: Option<DriftSpec>,
    #[serde(default)]
    pub q: Option<f64>,
    #[serde(default)]
    pub delta_hat: Option<f64>,
}

fn default_r() -> Vec<u32> {
    vec![1, 2]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowParams {
    #[serde(flatten)]
    pub ensemble: EnsembleParams,
    #[serde(default = "default_r")]
    pub r: Vec<u32>,
    #[serde(default)]
    pub malliavin_s: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegularityParams {
    pub drift: DriftSpec,
    pub x0: Vec<f64>,
    #[serde(default)]
    pub s: f64,
    pub t_end: f64,
    pub x_gaps: Vec<f64>,
    pub s_gaps: Vec<f64>,
    pub t_gaps: Vec<f64>,
    pub dt: f64,
    pub paths: usize,
    #[serde(default)]
    pub relaxed_step_check: bool,
    #[serde(default)]
    pub r: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvergeParams {
    pub drift: DriftSpec,
    pub levels: Vec<f64>,
    #[serde(default = "eps0")]
    pub eps0: f64,
    pub x0: Vec<f64>,
    pub t_end: f64,
    pub dt: f64,
    pub paths: usize,
    #[serde(default)]
    pub relaxed_step_check: bool,
    #[serde(default)]
    pub kappa: Option<f64>,
    #[serde(default)]
    pub theta: Option<f64>,
}

fn level() -> f64 {
    4000.0
}

fn crit_eps() -> f64 {
    1e-3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CriticalityParams {
    pub deltas: Vec<f64>,
    pub x0: Vec<f64>,
    pub t_end: f64,
    pub dt: f64,
    pub paths: usize,
    pub collapse_radius: f64,
    #[serde(default = "level")]
    pub level: f64,
    #[serde(default = "crit_eps")]
    pub eps: f64,
    #[serde(default = "one")]
    pub cutoff_radius: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Params {
    Formbound(FormboundParams),
    Mollify(MollifyParams),
    PdeCascade(CascadeParams),
    Simulate(SimulateParams),
    Krylov(KrylovParams),
    Flow(FlowParams),
    Regularity(RegularityParams),
    Converge(ConvergeParams),
    Criticality(CriticalityParams),
}

/// Command-line values that take precedence over the document.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub kind: Kind,
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub output: Option<PathBuf>,
    pub params: Params,
    /// Effective document, overrides applied, catalog references unresolved.
    pub document: Value,
}

const TOP_LEVEL: [&str; 6] = [
    "kind",
    "seed",
    "workers",
    "output",
    "drifts",
    "test_functions",
];

/// Parses TOML, or JSON when the text starts with `{`.
pub fn parse_document(text: &str) -> CliResult<Value> {
    if text.trim_start().starts_with('{') {
        serde_json::from_str(text).map_err(|e| CliError::Validation(vec![format!("document: {e}")]))
    } else {
        toml::from_str(text)
            .map_err(|e| CliError::Validation(vec![format!("document: {}", e.to_string().trim())]))
    }
}

fn positive(block: &str, field: &str, v: f64, errs: &mut Vec<String>) {
    if !(v > 0.0 && v.is_finite()) {
        errs.push(format!(
            "{block}.{field}: must be positive and finite, got {v}"
        ));
    }
}

fn nonzero(block: &str, field: &str, v: usize, errs: &mut Vec<String>) {
    if v == 0 {
        errs.push(format!("{block}.{field}: must be at least 1"));
    }
}

fn nonempty<T>(block: &str, field: &str, v: &[T], errs: &mut Vec<String>) {
    if v.is_empty() {
        errs.push(format!("{block}.{field}: must not be empty"));
    }
}

/// Replaces string references under `drift`, `g`, `sources` and `h` by
/// catalog entries.
fn resolve(
    block: &str,
    value: &mut Value,
    drifts: &BTreeMap<String, Value>,
    tests: &BTreeMap<String, Value>,
    errs: &mut Vec<String>,
) {
    let Some(map) = value.as_object_mut() else {
        return;
    };
    let mut lookup =
        |field: String, v: &mut Value, catalog: &BTreeMap<String, Value>, name: &str| {
            if let Value::String(key) = v {
                match catalog.get(key.as_str()) {
                    Some(entry) => *v = entry.clone(),
                    None => errs.push(format!(
                        "{block}.{field}: unknown {name} catalog entry '{key}'"
                    )),
                }
            }
        };
    for key in ["drift", "g"] {
        if let Some(v) = map.get_mut(key) {
            lookup(key.into(), v, drifts, "drifts");
        }
    }
    if let Some(Value::Array(items)) = map.get_mut("sources") {
        for (i, v) in items.iter_mut().enumerate() {
            lookup(format!("sources[{i}]"), v, drifts, "drifts");
        }
    }
    if let Some(v) = map.get_mut("h") {
        lookup("h".into(), v, tests, "test_functions");
    }
}

fn catalog(doc: &Value, key: &str, errs: &mut Vec<String>) -> BTreeMap<String, Value> {
    match doc.get(key) {
        None => BTreeMap::new(),
        Some(Value::Object(m)) => m.iter().map(|(k, v)| (k.clone(), v.clone())).collect(),
        Some(_) => {
            errs.push(format!("{key}: must be a table of named entries"));
            BTreeMap::new()
        }
    }
}

fn typed<T: DeserializeOwned>(block: &str, v: Value, errs: &mut Vec<String>) -> Option<T> {
    match serde_json::from_value(v) {
        Ok(t) => Some(t),
        Err(e) => {
            errs.push(format!("{block}: {e}"));
            None
        }
    }
}

fn check_drift(block: &str, field: &str, spec: &DriftSpec, errs: &mut Vec<String>) {
    if let Err(e) = spec.validate() {
        errs.push(format!("{block}.{field}: {e}"));
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path, expected: Option<Kind>, overrides: &Overrides) -> CliResult<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        Self::from_document(parse_document(&text)?, expected, overrides)
    }

    pub fn from_document(
        mut doc: Value,
        expected: Option<Kind>,
        overrides: &Overrides,
    ) -> CliResult<Self> {
        let mut errs = vec![];
        let Some(map) = doc.as_object_mut() else {
            return Err(CliError::Validation(vec![
                "document: top level must be a table".into(),
            ]));
        };
        if let Some(s) = overrides.seed {
            map.insert("seed".into(), Value::from(s));
        }
        if let Some(w) = overrides.workers {
            map.insert("workers".into(), Value::from(w));
        }
        if let Some(o) = &overrides.output {
            map.insert(
                "output".into(),
                Value::from(o.to_string_lossy().into_owned()),
            );
        }
        if !map.contains_key("kind") {
            if let Some(k) = expected {
                map.insert("kind".into(), Value::from(k.name()));
            }
        }
        let kind = match map.get("kind") {
            Some(Value::String(s)) => match Kind::parse(s) {
                Some(k) => Some(k),
                None => {
                    let names: Vec<&str> = Kind::ALL.iter().map(|k| k.name()).collect();
                    errs.push(format!(
                        "kind: unrecognized '{s}', expected one of {}",
                        names.join(", ")
                    ));
                    None
                }
            },
            Some(_) => {
                errs.push("kind: must be a string".into());
                None
            }
            None => {
                errs.push("kind: missing".into());
                None
            }
        };
        if let (Some(k), Some(e)) = (kind, expected) {
            if k != e {
                errs.push(format!(
                    "kind: document declares '{}' but the subcommand is '{}'",
                    k.name(),
                    e.name()
                ));
            }
        }
        for key in map.keys() {
            if !TOP_LEVEL.contains(&key.as_str()) && Kind::parse(key).is_none() {
                errs.push(format!("{key}: unknown top-level field"));
            }
        }
        let seed = match map.get("seed") {
            None => None,
            Some(v) => match v.as_u64() {
                Some(s) => Some(s),
                None => {
                    errs.push(format!("seed: must be a nonnegative integer, got {v}"));
                    None
                }
            },
        };
        let workers = match map.get("workers") {
            None => None,
            Some(v) => match v.as_u64() {
                Some(w) if w >= 1 => Some(w as usize),
                _ => {
                    errs.push(format!("workers: must be a positive integer, got {v}"));
                    None
                }
            },
        };
        let output = match map.get("output") {
            None => None,
            Some(Value::String(s)) => Some(PathBuf::from(s)),
            Some(v) => {
                errs.push(format!("output: must be a path string, got {v}"));
                None
            }
        };
        let drifts = catalog(&doc, "drifts", &mut errs);
        let tests = catalog(&doc, "test_functions", &mut errs);
        let Some(kind) = kind else {
            return Err(CliError::Validation(errs));
        };
        if kind.stochastic() && seed.is_none() && !errs.iter().any(|e| e.starts_with("seed:")) {
            errs.push(format!(
                "seed: required for the stochastic kind '{}'",
                kind.name()
            ));
        }
        let block = kind.name();
        let params = match doc.get(block) {
            None => {
                errs.push(format!("{block}: parameter block missing"));
                None
            }
            Some(v) => {
                let mut v = v.clone();
                resolve(block, &mut v, &drifts, &tests, &mut errs);
                Self::params(kind, v, &mut errs)
            }
        };
        match params {
            Some(params) if errs.is_empty() => Ok(Self {
                kind,
                seed,
                workers,
                output,
                params,
                document: doc,
            }),
            _ => Err(CliError::Validation(errs)),
        }
    }

    fn params(kind: Kind, v: Value, errs: &mut Vec<String>) -> Option<Params> {
        let b = kind.name();
        let n0 = errs.len();
        let p = match kind {
            Kind::Formbound => typed::<FormboundParams>(b, v, errs).map(|p| {
                check_drift(b, "drift", &p.drift, errs);
                nonempty(b, "times", &p.times, errs);
                Params::Formbound(p)
            }),
            Kind::Mollify => typed::<MollifyParams>(b, v, errs).map(|p| {
                check_drift(b, "drift", &p.drift, errs);
                nonempty(b, "levels", &p.levels, errs);
                positive(b, "eps0", p.eps0, errs);
                positive(b, "horizon", p.horizon, errs);
                Params::Mollify(p)
            }),
            Kind::PdeCascade => typed::<CascadeParams>(b, v, errs).map(|p| {
                check_drift(b, "drift", &p.cascade.drift, errs);
                for (i, f) in p.cascade.sources.iter().enumerate() {
                    check_drift(b, &format!("sources[{i}]"), f, errs);
                }
                for l in &p.lengths {
                    positive(b, "lengths", *l, errs);
                }
                Params::PdeCascade(p)
            }),
            Kind::Simulate => typed::<SimulateParams>(b, v, errs).map(|p| {
                check_drift(b, "drift", &p.ensemble.drift, errs);
                p.ensemble.check(b, errs);
                Params::Simulate(p)
            }),
            Kind::Krylov => typed::<KrylovParams>(b, v, errs).map(|p| {
                check_drift(b, "drift", &p.ensemble.drift, errs);
                p.ensemble.check(b, errs);
                if let Err(e) = p.h.validate(p.ensemble.drift.dimension) {
                    errs.push(format!("{b}.h: {e}"));
                }
                if let Some(g) = &p.g {
                    check_drift(b, "g", g, errs);
                    if p.q.is_none() {
                        errs.push(format!("{b}.q: required with g"));
                    }
                    if p.delta_hat.is_none() {
                        errs.push(format!("{b}.delta_hat: required with g"));
                    }
                }
                Params::Krylov(p)
            }),
            Kind::Flow => typed::<FlowParams>(b, v, errs).map(|p| {
                check_drift(b, "drift", &p.ensemble.drift, errs);
                p.ensemble.check(b, errs);
                nonempty(b, "r", &p.r, errs);
                if p.r.contains(&0) {
                    errs.push(format!("{b}.r: exponents must be at least 1"));
                }
                Params::Flow(p)
            }),
            Kind::Regularity => typed::<RegularityParams>(b, v, errs).map(|p| {
                check_drift(b, "drift", &p.drift, errs);
                positive(b, "dt", p.dt, errs);
                positive(b, "t_end", p.t_end, errs);
                nonzero(b, "paths", p.paths, errs);
                Params::Regularity(p)
            }),
            Kind::Converge => typed::<ConvergeParams>(b, v, errs).map(|p| {
                check_drift(b, "drift", &p.drift, errs);
                if p.levels.len() < 2 {
                    errs.push(format!("{b}.levels: need at least two levels"));
                }
                positive(b, "eps0", p.eps0, errs);
                positive(b, "dt", p.dt, errs);
                positive(b, "t_end", p.t_end, errs);
                nonzero(b, "paths", p.paths, errs);
                Params::Converge(p)
            }),
            Kind::Criticality => typed::<CriticalityParams>(b, v, errs).map(|p| {
                nonempty(b, "deltas", &p.deltas, errs);
                if p.deltas.iter().any(|d| !(*d >= 0.0 && d.is_finite())) {
                    errs.push(format!("{b}.deltas: must be nonnegative and finite"));
                }
                positive(b, "dt", p.dt, errs);
                positive(b, "t_end", p.t_end, errs);
                nonzero(b, "paths", p.paths, errs);
                if !(p.collapse_radius >= 0.0) {
                    errs.push(format!("{b}.collapse_radius: must be nonnegative"));
                }
                Params::Criticality(p)
            }),
        };
        if errs.len() > n0 {
            None
        } else {
            p
        }
    }

    /// Digest of the effective document without the execution-only fields
    /// `workers` and `output`.
    pub fn digest(&self) -> String {
        let mut doc = self.document.clone();
        if let Some(m) = doc.as_object_mut() {
            m.remove("workers");
            m.remove("output");
        }
        digest(&doc)
    }

    pub fn experiment_id(&self) -> String {
        format!("{}-{}", self.kind.name(), &self.digest()[..12])
    }

    pub fn seed_or_zero(&self) -> u64 {
        self.seed.unwrap_or(0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn load(text: &str, kind: Option<Kind>) -> CliResult<ExperimentConfig> {
        ExperimentConfig::from_document(parse_document(text).unwrap(), kind, &Overrides::default())
    }

    const ZERO: &str = r#"
kind = "formbound"
[formbound]
drift = { kind = "Zero", dimension = 3, cutoff_radius = 1.0 }
"#;

    #[test]
    fn toml_and_json_agree() {
        let a = load(ZERO, None).unwrap();
        let b = load(
            r#"{"formbound": {"drift": {"cutoff_radius": 1.0, "dimension": 3, "kind": "Zero"}}, "kind": "formbound"}"#,
            None,
        )
        .unwrap();
        assert_eq!(a.digest(), b.digest());
        assert_eq!(a.kind, Kind::Formbound);
        let Params::Formbound(p) = &a.params else {
            panic!()
        };
        assert_eq!(p.times, vec![0.0]);
    }

    #[test]
    fn every_offending_field_is_listed() {
        let text = r#"
kind = "simulate"
workers = 0
bogus = 1
[simulate]
drift = "missing"
start = { kind = "Point", x = [0.0, 0.0, 0.0] }
t_end = 1.0
dt = 0.01
paths = 10
"#;
        let Err(CliError::Validation(errs)) = load(text, None) else {
            panic!()
        };
        let joined = errs.join("\n");
        for needle in [
            "workers:",
            "bogus:",
            "seed: required",
            "simulate.drift: unknown drifts catalog entry 'missing'",
        ] {
            assert!(joined.contains(needle), "{needle} not in {joined}");
        }
    }

    #[test]
    fn catalog_references_resolve() {
        let text = r#"
kind = "formbound"
[drifts.h]
kind = "HardyAttractor"
c = 0.25
dimension = 3
cutoff_radius = 1.0
[formbound]
drift = "h"
family = "hardy-quasi-optimizers"
"#;
        let cfg = load(text, Some(Kind::Formbound)).unwrap();
        let Params::Formbound(p) = &cfg.params else {
            panic!()
        };
        assert_eq!(p.drift, DriftSpec::hardy(0.25, 3, 1.0));
        assert_eq!(cfg.document["formbound"]["drift"], "h");
    }

    #[test]
    fn kind_checks() {
        assert!(matches!(
            load("kind = \"nope\"", None),
            Err(CliError::Validation(_))
        ));
        let Err(CliError::Validation(errs)) = load(ZERO, Some(Kind::Mollify)) else {
            panic!()
        };
        assert!(errs.iter().any(|e| e.contains("subcommand")));
        // the subcommand supplies a missing kind
        let no_kind = ZERO.replace("kind = \"formbound\"\n", "");
        assert_eq!(
            load(&no_kind, Some(Kind::Formbound)).unwrap().kind,
            Kind::Formbound
        );
    }

    #[test]
    fn overrides_enter_the_document_but_not_the_digest_for_workers() {
        let base = load(ZERO, None).unwrap();
        let o = Overrides {
            seed: Some(9),
            workers: Some(3),
            output: None,
        };
        let cfg = ExperimentConfig::from_document(parse_document(ZERO).unwrap(), None, &o).unwrap();
        assert_eq!(cfg.seed, Some(9));
        assert_eq!(cfg.workers, Some(3));
        assert_ne!(cfg.digest(), base.digest());
        let o2 = Overrides {
            workers: Some(1),
            ..o
        };
        let cfg2 =
            ExperimentConfig::from_document(parse_document(ZERO).unwrap(), None, &o2).unwrap();
        assert_eq!(cfg.digest(), cfg2.digest());
    }
}
