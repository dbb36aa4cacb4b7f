//! Experiment configuration: one TOML schema shared by every subcommand.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use wavelab_core::heat::HeatGridSpec;
use wavelab_core::lattice::lattice_index;
use wavelab_core::limits::Standardization;
use wavelab_core::qv::admissible_counts;
use wavelab_core::SigmaSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Simulate,
    QvTime,
    QvSpace,
    /// Quadratic variation together with its intermediate sums.
    Ladder,
    Clt,
    Lil,
    Mart,
    Linearize,
}

impl ExperimentKind {
    pub fn name(&self) -> &'static str {
        match self {
            ExperimentKind::Simulate => "simulate",
            ExperimentKind::QvTime => "qv-time",
            ExperimentKind::QvSpace => "qv-space",
            ExperimentKind::Ladder => "ladder",
            ExperimentKind::Clt => "clt",
            ExperimentKind::Lil => "lil",
            ExperimentKind::Mart => "mart",
            ExperimentKind::Linearize => "linearize",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EquationChoice {
    #[default]
    Wave,
    Heat,
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    #[default]
    Temporal,
    Spatial,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatticeSection {
    pub h: f64,
    pub t: f64,
    #[serde(default)]
    pub x: f64,
    /// Spatial window `[x1, x2]` (qv-space, spatial ladder).
    pub x1: Option<f64>,
    pub x2: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeatSection {
    pub dx: f64,
    /// Defaults to `dx²/4`.
    pub dt: Option<f64>,
    pub length: f64,
    pub t: f64,
    #[serde(default)]
    pub x: f64,
}

impl HeatSection {
    pub fn dt(&self) -> f64 {
        self.dt.unwrap_or(self.dx * self.dx / 4.0)
    }
}

fn default_moments() -> Vec<f64> {
    vec![2.0, 4.0]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LadderSection {
    /// Partition counts `N`.
    #[serde(default)]
    pub partitions: Vec<usize>,
    /// Time lags (clt, lil, mart) or wave spatial scales (linearize).
    #[serde(default)]
    pub lags: Vec<f64>,
    /// Heat spatial scales (linearize).
    #[serde(default)]
    pub heat_lags: Vec<f64>,
    #[serde(default = "default_moments")]
    pub moments: Vec<f64>,
    #[serde(default = "default_standardization")]
    pub standardization: Standardization,
    #[serde(default)]
    pub axis: Axis,
    /// Number of replicates whose full fields are written (simulate).
    #[serde(default)]
    pub snapshots: usize,
}

fn default_standardization() -> Standardization {
    Standardization::Conditional
}

impl Default for LadderSection {
    fn default() -> Self {
        Self {
            partitions: Vec::new(),
            lags: Vec::new(),
            heat_lags: Vec::new(),
            moments: default_moments(),
            standardization: default_standardization(),
            axis: Axis::Temporal,
            snapshots: 0,
        }
    }
}

/// Bound on a named summary metric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Check {
    pub metric: String,
    pub min: Option<f64>,
    pub max: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AcceptanceSection {
    #[serde(default)]
    pub checks: Vec<Check>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    #[serde(default)]
    pub equation: EquationChoice,
    #[serde(with = "sigma_text")]
    pub sigma: SigmaSpec,
    pub replicates: usize,
    #[serde(default)]
    pub seed: u64,
    pub workers: Option<usize>,
    pub out_dir: Option<PathBuf>,
    pub lattice: Option<LatticeSection>,
    pub heat: Option<HeatSection>,
    #[serde(default)]
    pub ladder: LadderSection,
    #[serde(default)]
    pub acceptance: AcceptanceSection,
}

/// `sigma = "linear(1)"` or `sigma = { kind = "linear", lambda = 1 }`.
mod sigma_text {
    use super::*;

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Text(String),
        Table(SigmaSpec),
    }

    pub fn serialize<S: Serializer>(sigma: &SigmaSpec, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&sigma.to_string())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<SigmaSpec, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Text(s) => s.parse().map_err(serde::de::Error::custom),
            Repr::Table(sigma) => Ok(sigma),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigIssue> {
        toml::from_str(text).map_err(|e| ConfigIssue::new("syntax", e.to_string().trim_end().to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, ConfigIssue> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigIssue::new("io", format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|mut issue| {
            issue.message = format!("{}: {}", path.display(), issue.message);
            issue
        })
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(seed) = o.seed {
            self.seed = seed;
        }
        if let Some(r) = o.replicates {
            self.replicates = r;
        }
        if let Some(w) = o.workers {
            self.workers = Some(w);
        }
        if let Some(dir) = &o.out_dir {
            self.out_dir = Some(dir.clone());
        }
        if let Some(sigma) = o.sigma {
            self.sigma = sigma;
        }
        if let Some(eq) = o.equation {
            self.equation = eq;
        }
    }

    pub fn wave_involved(&self) -> bool {
        self.equation != EquationChoice::Heat
    }

    pub fn heat_involved(&self) -> bool {
        matches!(self.experiment, ExperimentKind::Simulate | ExperimentKind::Linearize)
            && self.equation != EquationChoice::Wave
    }
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub replicates: Option<usize>,
    pub workers: Option<usize>,
    pub out_dir: Option<PathBuf>,
    pub sigma: Option<SigmaSpec>,
    pub equation: Option<EquationChoice>,
}

/// One violated rule.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConfigIssue {
    pub rule: String,
    pub message: String,
    pub suggestion: Option<String>,
}

impl ConfigIssue {
    fn new(rule: &str, message: String) -> Self {
        Self { rule: rule.into(), message, suggestion: None }
    }

    fn suggest(mut self, s: String) -> Self {
        self.suggestion = Some(s);
        self
    }
}

impl fmt::Display for ConfigIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}] {}", self.rule, self.message)?;
        if let Some(s) = &self.suggestion {
            write!(f, " (suggestion: {s})")?;
        }
        Ok(())
    }
}

/// A configuration that passed every rule, with derived values echoed back.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidatedConfig {
    pub config: ExperimentConfig,
    /// Admissible partition counts for the configured window.
    pub admissible_partitions: Vec<usize>,
    pub warnings: Vec<String>,
}

fn nearest<T: Copy + Into<f64>>(candidates: &[T], target: f64) -> Option<T> {
    candidates
        .iter()
        .copied()
        .min_by(|a, b| ((*a).into() - target).abs().total_cmp(&((*b).into() - target).abs()))
}

struct Checker {
    issues: Vec<ConfigIssue>,
    warnings: Vec<String>,
}

impl Checker {
    fn fail(&mut self, rule: &str, message: String) {
        self.issues.push(ConfigIssue::new(rule, message));
    }

    fn fail_with(&mut self, rule: &str, message: String, suggestion: String) {
        self.issues.push(ConfigIssue::new(rule, message).suggest(suggestion));
    }

    fn positive(&mut self, name: &str, v: f64) -> bool {
        if v > 0.0 && v.is_finite() {
            true
        } else {
            self.fail("positive", format!("{name} = {v} must be positive and finite"));
            false
        }
    }

    /// Level index of `t`, or an issue.
    fn levels(&mut self, name: &str, t: f64, h: f64) -> Option<i64> {
        match lattice_index(t, h) {
            Some(k) if k >= 1 => Some(k),
            _ => {
                let k = (t / h).round().max(1.0);
                self.fail_with(
                    "alignment",
                    format!("{name} = {t} is not a positive multiple of h = {h}"),
                    format!("{name} = {}", k * h),
                );
                None
            }
        }
    }

    /// Column of a field point at level `level`, or an issue naming the nearest one.
    fn column(&mut self, name: &str, x: f64, h: f64, level: i64) -> Option<i64> {
        match lattice_index(x, h) {
            Some(m) if (m + level) % 2 == 0 => Some(m),
            _ => {
                let raw = (x / h).round() as i64;
                let m = if (raw + level) % 2 == 0 { raw } else if x / h >= raw as f64 { raw + 1 } else { raw - 1 };
                self.fail_with(
                    "alignment",
                    format!("{name} = {x} is not a lattice column at this time (x/h + t/h must be an even integer)"),
                    format!("{name} = {}", m as f64 * h),
                );
                None
            }
        }
    }

    fn partitions(&mut self, ns: &[usize], total: u32, what: &str) {
        if ns.is_empty() {
            self.fail("ladder", format!("{what} study needs at least one partition count N"));
        }
        let admissible = admissible_counts(total);
        for &n in ns {
            if !admissible.contains(&n) {
                let near = nearest(&admissible.iter().map(|&a| a as u32).collect::<Vec<_>>(), n as f64);
                self.fail_with(
                    "partition",
                    format!("N = {n} does not split {total} lattice steps into equal even-length intervals; admissible N: {admissible:?}"),
                    near.map(|a| format!("N = {a}")).unwrap_or_else(|| "a smaller h".into()),
                );
            }
        }
    }

    fn time_lags(&mut self, lags: &[f64], h: f64, name: &str) {
        if lags.is_empty() {
            self.fail("ladder", format!("{name} needs a nonempty lag ladder"));
        }
        for &e in lags {
            match lattice_index(e, h) {
                Some(k) if k >= 2 && k % 2 == 0 => {}
                Some(k) if k < 2 => self.fail_with(
                    "resolution",
                    format!("lag {e} is below the lattice resolution 2h = {}", 2.0 * h),
                    format!("lag ≥ {}", 2.0 * h),
                ),
                _ => {
                    let k = ((e / h / 2.0).round().max(1.0)) * 2.0;
                    self.fail_with("alignment", format!("lag {e} is not an even multiple of h = {h}"), format!("lag = {}", k * h));
                }
            }
        }
    }
}

/// Checks every alignment, domain and stability rule and reports all
/// violations at once.
pub fn validate(config: &ExperimentConfig) -> Result<ValidatedConfig, Vec<ConfigIssue>> {
    let mut c = Checker { issues: Vec::new(), warnings: Vec::new() };
    let mut admissible_partitions = Vec::new();
    let kind = config.experiment;

    if config.replicates == 0 {
        c.fail_with("replicates", "replicate count must be at least 1".into(), "replicates = 1000".into());
    }
    if !config.sigma.is_finite() {
        c.fail("sigma", format!("σ = {} has non-finite parameters", config.sigma));
    }
    if config.workers == Some(0) {
        c.fail_with("workers", "worker count must be at least 1".into(), "omit workers to use all cores".into());
    }
    let needs_nonzero = matches!(kind, ExperimentKind::Clt | ExperimentKind::Lil);
    if needs_nonzero && config.sigma.constant_value() == Some(0.0) {
        c.fail("degenerate", "σ ≡ 0 makes the increments vanish; standardization is undefined".into());
    }
    if kind != ExperimentKind::Linearize && kind != ExperimentKind::Simulate && config.equation != EquationChoice::Wave {
        c.fail("equation", format!("{} experiments are defined for the wave equation only", kind.name()));
    }
    if kind == ExperimentKind::Simulate && config.equation == EquationChoice::Both {
        c.fail("equation", "simulate takes equation = \"wave\" or \"heat\"".into());
    }

    if config.wave_involved() {
        match &config.lattice {
            None => c.fail("lattice", "missing [lattice] section (h, t, x)".into()),
            Some(l) => validate_wave(config, l, &mut c, &mut admissible_partitions),
        }
    }
    if config.heat_involved() {
        match &config.heat {
            None => c.fail("heat", "missing [heat] section (dx, length, t)".into()),
            Some(hs) => validate_heat(config, hs, &mut c),
        }
    }
    for check in &config.acceptance.checks {
        if check.min.is_none() && check.max.is_none() {
            c.fail("acceptance", format!("check on '{}' declares neither min nor max", check.metric));
        }
    }

    if c.issues.is_empty() {
        Ok(ValidatedConfig { config: config.clone(), admissible_partitions, warnings: c.warnings })
    } else {
        Err(c.issues)
    }
}

fn validate_wave(config: &ExperimentConfig, l: &LatticeSection, c: &mut Checker, admissible: &mut Vec<usize>) {
    if !(c.positive("h", l.h) & c.positive("t", l.t)) {
        return;
    }
    let Some(big_t) = c.levels("t", l.t, l.h) else { return };
    let ladder = &config.ladder;
    let kind = config.experiment;
    let spatial = kind == ExperimentKind::QvSpace || (kind == ExperimentKind::Ladder && ladder.axis == Axis::Spatial);
    if spatial {
        let (Some(x1), Some(x2)) = (l.x1, l.x2) else {
            c.fail("window", "spatial study needs lattice.x1 < lattice.x2".into());
            return;
        };
        if !(x1 < x2) {
            c.fail("window", format!("need x1 < x2, got [{x1}, {x2}]"));
            return;
        }
        let (Some(m1), Some(m2)) = (c.column("x1", x1, l.h, big_t), c.column("x2", x2, l.h, big_t)) else { return };
        *admissible = admissible_counts((m2 - m1) as u32);
        c.partitions(&ladder.partitions, (m2 - m1) as u32, "spatial");
    } else if c.column("x", l.x, l.h, big_t).is_some() {
        match kind {
            ExperimentKind::QvTime | ExperimentKind::Ladder => {
                *admissible = admissible_counts(big_t as u32);
                c.partitions(&ladder.partitions, big_t as u32, "temporal");
            }
            ExperimentKind::Clt | ExperimentKind::Mart | ExperimentKind::Lil => {
                c.time_lags(&ladder.lags, l.h, kind.name());
            }
            ExperimentKind::Linearize => {
                if ladder.lags.is_empty() {
                    c.fail("ladder", "wave linearization needs spatial scales in ladder.lags".into());
                }
                for &d in &ladder.lags {
                    if !matches!(lattice_index(d, l.h), Some(k) if k > 0 && k % 2 == 0) {
                        let k = ((d / l.h / 2.0).round().max(1.0)) * 2.0;
                        c.fail_with("alignment", format!("scale {d} is not an even multiple of h = {}", l.h), format!("scale = {}", k * l.h));
                    }
                }
            }
            _ => {}
        }
    }
    if kind == ExperimentKind::Lil {
        let bound = (-1.0f64).exp();
        for &e in ladder.lags.iter().filter(|&&e| e >= bound) {
            c.fail_with("lil", format!("lag {e} must be below 1/e so that log log(1/ε) > 0"), format!("lag ≤ {}", l.t / 8.0));
        }
    }
    if kind == ExperimentKind::Mart && ladder.lags.iter().filter(|&&e| e > 0.0).count() < 2 {
        c.fail("ladder", "martingale study needs at least two positive lags".into());
    }
    if kind == ExperimentKind::Clt && ladder.standardization == Standardization::ExactShell && config.sigma.constant_value().is_none() {
        c.fail("standardization", format!("exact-shell standardization needs a constant σ, got {}", config.sigma));
    }
    if matches!(kind, ExperimentKind::QvTime | ExperimentKind::QvSpace | ExperimentKind::Ladder) {
        if ladder.moments.iter().any(|&p| p < 2.0) {
            c.fail("moments", "moment orders must be ≥ 2".into());
        }
        if ladder.partitions.len() < 4 {
            c.warnings.push(format!("{} partition counts: no rate slope is reported (needs ≥ 4)", ladder.partitions.len()));
        }
    }
    if kind == ExperimentKind::Clt && config.replicates < 500 {
        c.warnings.push(format!("{} replicates (< 500): KS test has little power", config.replicates));
    }
}

fn validate_heat(config: &ExperimentConfig, hs: &HeatSection, c: &mut Checker) {
    if !(c.positive("heat.dx", hs.dx) & c.positive("heat.length", hs.length) & c.positive("heat.t", hs.t)) {
        return;
    }
    let dt = hs.dt();
    if dt > hs.dx * hs.dx / 2.0 * (1.0 + 1e-12) {
        c.fail_with(
            "stability",
            format!("explicit heat scheme is unstable for dt = {dt} > dx²/2 = {}", hs.dx * hs.dx / 2.0),
            format!("dt = {}", hs.dx * hs.dx / 4.0),
        );
        return;
    }
    match HeatGridSpec::new(hs.dx, dt, hs.length, hs.t) {
        Err(e) => c.fail("heat-grid", e.to_string()),
        Ok(grid) => {
            if !grid.periodization_ok() {
                c.warnings.push(format!(
                    "circle length {} < 16·√t = {}: periodization effects may be visible",
                    hs.length,
                    16.0 * hs.t.sqrt()
                ));
            }
            if lattice_index(hs.x, hs.dx).is_none() {
                c.fail_with("alignment", format!("heat.x = {} is not a multiple of dx", hs.x), format!("heat.x = {}", (hs.x / hs.dx).round() * hs.dx));
            }
            if config.experiment == ExperimentKind::Linearize {
                if config.ladder.heat_lags.is_empty() {
                    c.fail("ladder", "heat linearization needs spatial scales in ladder.heat_lags".into());
                }
                for &d in &config.ladder.heat_lags {
                    if !matches!(lattice_index(d, hs.dx), Some(k) if k > 0 && (k as usize) < grid.n_cells()) {
                        c.fail_with(
                            "alignment",
                            format!("heat scale {d} is not a positive multiple of dx = {} below L", hs.dx),
                            format!("scale = {}", ((d / hs.dx).round().max(1.0)) * hs.dx),
                        );
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn qv_time(n: usize) -> String {
        format!(
            r#"
experiment = "qv-time"
sigma = "constant(1)"
replicates = 10
[lattice]
h = 0.015625
t = 1.0
[ladder]
partitions = [{n}]
"#
        )
    }

    #[test]
    fn admissible_temporal_partition() {
        let v = validate(&ExperimentConfig::from_toml(&qv_time(32)).unwrap()).unwrap();
        assert_eq!(v.admissible_partitions, vec![1, 2, 4, 8, 16, 32]);
    }

    #[test]
    fn misaligned_partition_suggests_nearest() {
        let issues = validate(&ExperimentConfig::from_toml(&qv_time(48)).unwrap()).unwrap_err();
        assert_eq!(issues.len(), 1);
        assert_eq!(issues[0].rule, "partition");
        assert!(issues[0].message.contains("[1, 2, 4, 8, 16, 32]"));
        assert_eq!(issues[0].suggestion.as_deref(), Some("N = 32"));
    }

    #[test]
    fn zero_replicates_rejected() {
        let mut cfg = ExperimentConfig::from_toml(&qv_time(32)).unwrap();
        cfg.replicates = 0;
        let issues = validate(&cfg).unwrap_err();
        assert!(issues.iter().any(|i| i.rule == "replicates"));
    }

    #[test]
    fn unstable_heat_step_cites_stability() {
        let text = r#"
experiment = "linearize"
equation = "heat"
sigma = "linear(1)"
replicates = 10
[heat]
dx = 0.0625
dt = 0.003
length = 4.0
t = 0.0625
[ladder]
heat_lags = [0.0625]
"#;
        let issues = validate(&ExperimentConfig::from_toml(text).unwrap()).unwrap_err();
        assert_eq!(issues[0].rule, "stability");
    }

    #[test]
    fn sigma_accepts_text_and_table() {
        let text = qv_time(32).replace("sigma = \"constant(1)\"", "sigma = { kind = \"affine\", a = 0.5, b = 1.0 }");
        let cfg = ExperimentConfig::from_toml(&text).unwrap();
        assert_eq!(cfg.sigma, SigmaSpec::Affine { a: 0.5, b: 1.0 });
        let round = toml::to_string(&cfg).unwrap();
        assert_eq!(ExperimentConfig::from_toml(&round).unwrap(), cfg);
    }

    #[test]
    fn all_violations_reported_together() {
        let text = r#"
experiment = "clt"
sigma = "constant(0)"
replicates = 0
[lattice]
h = 0.015625
t = 1.0
x = 0.01
[ladder]
lags = [0.015625]
"#;
        let issues = validate(&ExperimentConfig::from_toml(text).unwrap()).unwrap_err();
        let rules: Vec<&str> = issues.iter().map(|i| i.rule.as_str()).collect();
        assert!(rules.contains(&"replicates") && rules.contains(&"degenerate") && rules.contains(&"alignment"), "{rules:?}");
    }

    #[test]
    fn unknown_keys_rejected() {
        let text = qv_time(32) + "bogus = 1\n";
        assert!(ExperimentConfig::from_toml(&text).is_err());
    }

    #[test]
    fn overrides_apply() {
        let mut cfg = ExperimentConfig::from_toml(&qv_time(32)).unwrap();
        cfg.apply(&Overrides { seed: Some(9), replicates: Some(3), workers: Some(2), ..Default::default() });
        assert_eq!((cfg.seed, cfg.replicates, cfg.workers), (9, 3, Some(2)));
    }
}
