//! Scenario files: a TOML document describing a chain, its scaling, initial
//! counts, horizon, mutation law and probes.
//!
//! ```toml
//! seed = 7
//! replicas = 50
//! mode = "all_neighbors"
//!
//! [scaling]
//! K = 1000
//! epsilon = "K^-0.8"
//!
//! [kernels]
//! alpha_self = 1.0
//! alpha_neighbor = 1.0
//! m_neighbor = 0.5
//!
//! [[traits]]
//! id = "x0"
//! b = 3.0
//!
//! [[traits]]
//! id = "x1"
//! b = 6.0
//!
//! [initial]
//! x0 = "3K"
//!
//! [horizon]
//! value = 2.5
//! unit = "ln_inv_eps"
//! ```

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::analysis::{Direction, ProbeSpec};
use crate::diploid::{AdditiveAlleles, AlleleSpace};
use crate::error::{Error, Result};
use crate::microsim::{MigrationMode, Scenario};
use crate::mutation::MutationLawSpec;
use crate::odelimit::default_eta;
use crate::traitspace::{KernelSpec, OrderedTraitSpace, TraitSpec};

/// A number given literally or as a power of K, e.g. `"K^-0.8"` or `"K^(-4/5)"`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Param {
    Number(f64),
    Text(String),
}

impl Default for Param {
    fn default() -> Self {
        Param::Number(0.0)
    }
}

fn parse_exponent(s: &str) -> Option<f64> {
    let s = s.trim();
    let s = s.strip_prefix('(').and_then(|r| r.strip_suffix(')')).unwrap_or(s).trim();
    if let Some((a, b)) = s.split_once('/') {
        let (a, b): (f64, f64) = (a.trim().parse().ok()?, b.trim().parse().ok()?);
        (b != 0.0).then(|| a / b)
    } else {
        s.parse().ok()
    }
}

/// Parses `"K^a"` (with `a` a decimal or fraction) or a plain number.
pub fn parse_k_power(s: &str, k: u64) -> Option<f64> {
    let t: String = s.chars().filter(|c| !c.is_whitespace()).collect();
    if let Some(exp) = t.strip_prefix("K^") {
        return parse_exponent(exp).map(|e| (k as f64).powf(e));
    }
    t.parse().ok()
}

impl Param {
    pub fn resolve(&self, k: u64) -> Option<f64> {
        match self {
            Param::Number(v) => Some(*v),
            Param::Text(s) => parse_k_power(s, k),
        }
    }
}

/// An initial count: an integer, or a multiple of K such as `"3K"` (floored).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Count {
    Int(u64),
    Text(String),
}

impl Count {
    pub fn resolve(&self, k: u64) -> Option<u64> {
        match self {
            Count::Int(n) => Some(*n),
            Count::Text(s) => {
                let t = s.trim();
                if let Some(m) = t.strip_suffix('K') {
                    let m: f64 = if m.trim().is_empty() { 1.0 } else { m.trim().parse().ok()? };
                    (m >= 0.0).then(|| (m * k as f64).floor() as u64)
                } else {
                    t.parse().ok()
                }
            }
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeUnit {
    #[default]
    Natural,
    /// Multiples of `ln(1/epsilon)`.
    LnInvEps,
    /// Multiples of `1/(K sigma)`.
    MutationScale,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Horizon {
    pub value: f64,
    #[serde(default)]
    pub unit: TimeUnit,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scaling {
    #[serde(rename = "K")]
    pub k: u64,
    pub epsilon: Param,
    #[serde(default)]
    pub sigma: Param,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraitEntry {
    pub id: String,
    pub b: f64,
    #[serde(default)]
    pub d: f64,
    #[serde(default)]
    pub mu: f64,
    /// Fitness rank; when every entry omits it, file order is the rank order.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rank: Option<usize>,
}

/// Probe threshold: a mass, `"eta"`, `"epsilon"`, `"epsilon^c"` or a K-power.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Level {
    Number(f64),
    Text(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeEntry {
    pub id: String,
    #[serde(rename = "trait")]
    pub trait_id: String,
    pub level: Level,
    pub direction: Direction,
    /// Ids of earlier probes that must fire first.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub armed_by: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    /// Snapshots per trajectory, equispaced on `[0, horizon]`.
    #[serde(default = "default_grid")]
    pub grid_points: usize,
}

fn default_grid() -> usize {
    101
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection {
            grid_points: default_grid(),
        }
    }
}

/// Diploid model: genotypes over `alleles` alleles under an additive law.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiploidSection {
    #[serde(default = "one")]
    pub alleles: usize,
    #[serde(flatten)]
    pub law: AdditiveAlleles,
}

fn one() -> usize {
    1
}

fn one_u64() -> u64 {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "one_u64")]
    pub replicas: u64,
    #[serde(default = "default_mode")]
    pub mode: MigrationMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta: Option<f64>,
    pub scaling: Scaling,
    pub kernels: KernelSpec,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub traits: Vec<TraitEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diploid: Option<DiploidSection>,
    #[serde(default)]
    pub initial: BTreeMap<String, Count>,
    pub horizon: Horizon,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mutation: Option<MutationLawSpec>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub probes: Vec<ProbeEntry>,
    #[serde(default)]
    pub output: OutputSection,
}

fn default_mode() -> MigrationMode {
    MigrationMode::AllNeighbors
}

/// 1-based line of the first occurrence of `needle`, for diagnostics.
fn line_of(src: &str, needle: &str) -> Option<usize> {
    src.lines().position(|l| l.contains(needle)).map(|i| i + 1)
}

fn at_line(src: &str, needle: &str, msg: String) -> Error {
    match line_of(src, needle) {
        Some(l) => Error::Scenario(format!("line {l}: {msg}")),
        None => Error::Scenario(msg),
    }
}

fn set_path(cur: &mut toml::Value, segs: &[&str], value: toml::Value, path: &str) -> Result<()> {
    let (seg, rest) = (segs[0], &segs[1..]);
    let next = match cur {
        toml::Value::Table(t) => {
            if rest.is_empty() {
                t.insert(seg.to_string(), value);
                return Ok(());
            }
            t.entry(seg.to_string())
                .or_insert_with(|| toml::Value::Table(toml::Table::new()))
        }
        toml::Value::Array(a) => {
            let idx: usize = seg
                .parse()
                .map_err(|_| Error::Scenario(format!("override {path:?}: {seg:?} is not an index")))?;
            let len = a.len();
            let slot = a
                .get_mut(idx)
                .ok_or_else(|| Error::Scenario(format!("override {path:?}: index {idx} out of {len}")))?;
            if rest.is_empty() {
                *slot = value;
                return Ok(());
            }
            slot
        }
        _ => return Err(Error::Scenario(format!("override {path:?}: {seg:?} is not a table"))),
    };
    set_path(next, rest, value, path)
}

/// Sets `path` (dotted; numeric segments index arrays) to `value`, parsed as
/// a TOML value when possible and as a string otherwise.
pub fn apply_override(doc: &mut toml::Table, path: &str, value: &str) -> Result<()> {
    let parsed: toml::Value = toml::from_str::<toml::Table>(&format!("v = {value}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(value.to_string()));
    let segs: Vec<&str> = path.split('.').collect();
    if segs.iter().any(|s| s.is_empty()) {
        return Err(Error::Scenario(format!("bad override key {path:?}")));
    }
    let mut root = toml::Value::Table(std::mem::take(doc));
    let res = set_path(&mut root, &segs, parsed, path);
    if let toml::Value::Table(t) = root {
        *doc = t;
    }
    res
}

/// Parameters after K-powers, counts and time units are resolved.
#[derive(Clone, Debug, PartialEq)]
pub struct Resolved {
    pub file: ScenarioFile,
    /// Canonical TOML of `file`; replaying it reproduces the run.
    pub source: String,
    pub k: u64,
    pub epsilon: f64,
    pub sigma: f64,
    /// Horizon in natural time.
    pub horizon: f64,
    pub eta: f64,
    pub scenario: Scenario,
    pub probes: Vec<ProbeSpec>,
    pub advisories: Vec<String>,
}

impl Resolved {
    /// Horizon in mutation-scale units, `horizon * K * sigma`.
    pub fn horizon_mutation_scale(&self) -> Result<f64> {
        if self.file.horizon.unit == TimeUnit::MutationScale {
            return Ok(self.file.horizon.value);
        }
        if !(self.sigma > 0.0) {
            return Err(Error::Scenario("mutation-scale horizon needs sigma > 0".into()));
        }
        Ok(self.horizon * self.k as f64 * self.sigma)
    }
}

/// Parses scenario text and applies `key=value` overrides.
pub fn parse(src: &str, overrides: &[(String, String)]) -> Result<Resolved> {
    let mut doc: toml::Table = toml::from_str(src).map_err(|e| Error::Scenario(e.to_string()))?;
    for (k, v) in overrides {
        apply_override(&mut doc, k, v)?;
    }
    let file: ScenarioFile = if overrides.is_empty() {
        toml::from_str(src).map_err(|e| Error::Scenario(e.to_string()))?
    } else {
        ScenarioFile::deserialize(toml::Value::Table(doc)).map_err(|e| Error::Scenario(format!("after overrides: {e}")))?
    };
    let check_src = if overrides.is_empty() { src.to_string() } else { String::new() };
    resolve(file, &check_src)
}

/// Reads a scenario from TOML text, or from a run manifest (JSON with a
/// `scenario` field holding the TOML).
pub fn parse_any(src: &str, overrides: &[(String, String)]) -> Result<Resolved> {
    if src.trim_start().starts_with('{') {
        let v: serde_json::Value = serde_json::from_str(src).map_err(|e| Error::Scenario(e.to_string()))?;
        let inner = v
            .get("scenario")
            .and_then(|s| s.as_str())
            .ok_or_else(|| Error::Scenario("manifest has no scenario field".into()))?;
        return parse(inner, overrides);
    }
    parse(src, overrides)
}

fn build_chain(file: &ScenarioFile, src: &str) -> Result<OrderedTraitSpace> {
    let kernels = file.kernels;
    kernels.validate().map_err(|e| at_line(src, "[kernels]", e.to_string()))?;
    match (&file.diploid, file.traits.is_empty()) {
        (Some(_), false) => Err(Error::Scenario("give either traits or a diploid section, not both".into())),
        (None, true) => Err(Error::Scenario("no traits".into())),
        (Some(dip), true) => Ok(dip.law.space(AlleleSpace::numbered(dip.alleles), kernels)?.chain),
        (None, false) => {
            let mut entries: Vec<&TraitEntry> = file.traits.iter().collect();
            let ranked = entries.iter().filter(|e| e.rank.is_some()).count();
            if ranked > 0 {
                if ranked != entries.len() {
                    return Err(at_line(src, "rank", "either every trait has a rank or none does".into()));
                }
                entries.sort_by_key(|e| e.rank);
                if entries.iter().enumerate().any(|(i, e)| e.rank != Some(i)) {
                    return Err(at_line(src, "rank", "ranks must be 0, 1, .., n-1".into()));
                }
            }
            let traits = entries
                .iter()
                .map(|e| {
                    TraitSpec::new(e.id.as_str(), e.b, e.d, e.mu)
                        .map_err(|err| at_line(src, &format!("\"{}\"", e.id), err.to_string()))
                })
                .collect::<Result<Vec<_>>>()?;
            OrderedTraitSpace::new(traits, kernels).map_err(|e| at_line(src, "[[traits]]", e.to_string()))
        }
    }
}

fn resolve_level(level: &Level, eps: f64, eta: f64, k: u64) -> Option<f64> {
    match level {
        Level::Number(v) => Some(*v),
        Level::Text(s) => {
            let t: String = s.chars().filter(|c| !c.is_whitespace()).collect();
            match t.as_str() {
                "eta" => Some(eta),
                "epsilon" => Some(eps),
                _ => match t.strip_prefix("epsilon^") {
                    Some(c) => parse_exponent(c).map(|c| eps.powf(c)),
                    None => parse_k_power(&t, k),
                },
            }
        }
    }
}

fn resolve(file: ScenarioFile, src: &str) -> Result<Resolved> {
    let k = file.scaling.k;
    if k == 0 {
        return Err(at_line(src, "K", "K must be a positive integer".into()));
    }
    let epsilon = file
        .scaling
        .epsilon
        .resolve(k)
        .ok_or_else(|| at_line(src, "epsilon", format!("cannot read epsilon {:?}", file.scaling.epsilon)))?;
    let sigma = file
        .scaling
        .sigma
        .resolve(k)
        .ok_or_else(|| at_line(src, "sigma", format!("cannot read sigma {:?}", file.scaling.sigma)))?;
    let space = build_chain(&file, src)?;
    let mut initial = vec![0u64; space.len()];
    for (id, c) in &file.initial {
        let r = space
            .rank_of(&id.as_str().into())
            .ok_or_else(|| at_line(src, &format!("{id} ="), format!("initial count for unknown trait {id}")))?;
        initial[r] = c
            .resolve(k)
            .ok_or_else(|| at_line(src, &format!("{id} ="), format!("cannot read count {c:?}")))?;
    }
    let horizon = match file.horizon.unit {
        TimeUnit::Natural => file.horizon.value,
        TimeUnit::LnInvEps => {
            if !(epsilon > 0.0 && epsilon < 1.0) {
                return Err(at_line(src, "unit", "ln_inv_eps horizon needs 0 < epsilon < 1".into()));
            }
            file.horizon.value * (1.0 / epsilon).ln()
        }
        TimeUnit::MutationScale => {
            if !(sigma > 0.0) {
                return Err(at_line(src, "unit", "mutation_scale horizon needs sigma > 0".into()));
            }
            file.horizon.value / (k as f64 * sigma)
        }
    };
    let eta = file.eta.unwrap_or_else(|| default_eta(&space));
    let mut probes = Vec::with_capacity(file.probes.len());
    for (i, p) in file.probes.iter().enumerate() {
        let level = resolve_level(&p.level, epsilon, eta, k)
            .ok_or_else(|| at_line(src, &p.id, format!("probe {}: cannot read level {:?}", p.id, p.level)))?;
        if space.rank_of(&p.trait_id.as_str().into()).is_none() && file.mutation.is_none() {
            return Err(at_line(src, &p.id, format!("probe {} watches unknown trait {}", p.id, p.trait_id)));
        }
        let armed_by = p
            .armed_by
            .iter()
            .map(|a| {
                file.probes[..i]
                    .iter()
                    .position(|q| q.id == *a)
                    .ok_or_else(|| at_line(src, &p.id, format!("probe {} armed by unknown or later probe {a}", p.id)))
            })
            .collect::<Result<Vec<_>>>()?;
        probes.push(ProbeSpec {
            id: p.id.clone(),
            trait_id: p.trait_id.as_str().into(),
            level,
            direction: p.direction,
            armed_by,
        });
    }
    let scenario = Scenario {
        space,
        k,
        epsilon,
        sigma,
        initial,
        horizon,
        mode: file.mode,
        seed: file.seed,
        mutation: file.mutation.clone(),
    };
    scenario.validate().map_err(|e| Error::Scenario(e.to_string()))?;
    let mut advisories = scenario.regime_warnings();
    if let Some(b3) = scenario.space.check_b3().iter().find(|c| !c.holds) {
        advisories.push(format!(
            "B3 fails at index {}: {:.4} < {:.4}",
            b3.index, b3.lhs, b3.rhs
        ));
    }
    if file.diploid.is_some() && sigma > 0.0 && file.mutation.is_none() {
        advisories.push("microscopic runs of a genotype chain have no mutation law and stop at the first mutation".into());
    }
    let source = toml::to_string(&file).map_err(|e| Error::Scenario(e.to_string()))?;
    Ok(Resolved {
        file,
        source,
        k,
        epsilon,
        sigma,
        horizon,
        eta,
        scenario,
        probes,
        advisories,
    })
}
