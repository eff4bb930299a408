//! Scenario description, in memory and as a TOML file.
//!
//! ```toml
//! [seed]
//! value = 7
//!
//! [registry]
//! path = "registry.txt"       # relative to the scenario file; or `generate = 10`
//! provision_at = 1700000100   # optional: move every tag's T_SYS here first
//!
//! [grant]
//! uav = "UAV-1"
//! tags = "all"                # or ["luggage-0000", "luggage-0003"]
//! t0 = 1700000000
//! tz = 1700003600
//! ar = "r--"                  # or 32 hex chars
//!
//! [[schedule]]
//! at = 1700000200
//! action = "auth-round"
//! in_range = ["luggage-0000"] # optional, default: every tag
//!
//! [[schedule]]
//! at = 1700000300
//! action = "search"
//! target = "<temp_id_hex>"    # or target_label = "luggage-0003"
//!
//! [adversary]
//! strategy = "replay"         # eavesdrop | replay | masquerade-uav | counterfeit-tag | tracking-game
//! budget = 8                # messages injected or dropped; default 16
//! ```

use std::fmt;
use std::path::Path;

use serde::Deserialize;
use thiserror::Error;

use crate::actors::{derive_temp_id, TagRegistry, TagSelection};
use crate::crypto::{MacAlgorithm, RandomSource};
use crate::sim::adversary::{AdversaryScript, Strategy, DEFAULT_BUDGET};
use crate::sim::Protocol;
use crate::wire::{AccessRights, MessageKind, TempId, Timestamp32};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FieldIssue {
    pub field: String,
    pub message: String,
}

/// Every problem found in a scenario, not just the first.
#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub struct ValidationError {
    pub issues: Vec<FieldIssue>,
}

impl ValidationError {
    pub fn single(field: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            issues: vec![FieldIssue {
                field: field.into(),
                message: message.into(),
            }],
        }
    }

    pub fn fields(&self) -> Vec<&str> {
        self.issues.iter().map(|i| i.field.as_str()).collect()
    }
}

impl fmt::Display for ValidationError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "invalid scenario:")?;
        for issue in &self.issues {
            write!(f, "\n  {}: {}", issue.field, issue.message)?;
        }
        Ok(())
    }
}

#[derive(Default)]
struct Issues(Vec<FieldIssue>);

impl Issues {
    fn push(&mut self, field: impl Into<String>, message: impl Into<String>) {
        self.0.push(FieldIssue {
            field: field.into(),
            message: message.into(),
        });
    }

    fn finish(self) -> Result<(), ValidationError> {
        if self.0.is_empty() {
            Ok(())
        } else {
            Err(ValidationError { issues: self.0 })
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GrantSpec {
    pub uav_id: String,
    pub tags: TagSelection,
    pub rights: AccessRights,
    pub start: Timestamp32,
    pub end: Timestamp32,
    /// Server time at issuance; defaults to `start`.
    pub issued_at: Option<Timestamp32>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Action {
    AuthRound,
    Search { target: TempId },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScheduledAction {
    pub at: Timestamp32,
    pub action: Action,
    /// Labels of tags hearing this broadcast; `None` means every tag.
    pub in_range: Option<Vec<String>>,
}

#[derive(Debug, Clone)]
pub struct ScenarioConfig {
    pub seed: u64,
    pub mac: MacAlgorithm,
    pub registry: TagRegistry,
    pub grant: GrantSpec,
    pub provision_at: Option<Timestamp32>,
    pub schedule: Vec<ScheduledAction>,
    pub adversary: Option<AdversaryScript>,
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<(), ValidationError> {
        let mut issues = Issues::default();
        if self.registry.is_empty() {
            issues.push("registry", "registry has no tags");
        }
        let g = &self.grant;
        if g.uav_id.is_empty() || g.uav_id.contains(char::is_whitespace) {
            issues.push("grant.uav", "must be non-empty without whitespace");
        }
        if g.end <= g.start {
            issues.push("grant.tz", format!("TZ {} must be after T0 {}", g.end, g.start));
        }
        match &g.tags {
            TagSelection::All => {}
            TagSelection::Labels(labels) => {
                if labels.is_empty() {
                    issues.push("grant.tags", "selection is empty");
                }
                for l in labels {
                    if self.registry.index_of_label(l).is_none() {
                        issues.push("grant.tags", format!("unknown tag label {l:?}"));
                    }
                }
            }
            TagSelection::Indices(ix) => {
                if ix.is_empty() {
                    issues.push("grant.tags", "selection is empty");
                }
                if ix.iter().any(|&i| i >= self.registry.len()) {
                    issues.push("grant.tags", "tag index out of range");
                }
            }
        }
        let mut prev: Option<Timestamp32> = None;
        let mut searches: Vec<(TempId, Timestamp32)> = Vec::new();
        for (n, step) in self.schedule.iter().enumerate() {
            if prev.is_some_and(|p| step.at < p) {
                issues.push(format!("schedule[{n}].at"), "times must be non-decreasing");
            }
            prev = Some(step.at);
            if let Some(labels) = &step.in_range {
                for l in labels {
                    if self.registry.index_of_label(l).is_none() {
                        issues.push(format!("schedule[{n}].in_range"), format!("unknown tag label {l:?}"));
                    }
                }
            }
            if let Action::Search { target } = &step.action {
                if searches.contains(&(*target, step.at)) {
                    issues.push(
                        format!("schedule[{n}].at"),
                        "two searches for the same target within one second",
                    );
                }
                searches.push((*target, step.at));
                if !self.granted_temp_ids().contains(target) {
                    issues.push(format!("schedule[{n}].target"), "target is not in the grant");
                }
            }
        }
        if let Some(adv) = &self.adversary {
            adv.validate(self, &mut |field, message| issues.push(field, message));
        }
        issues.finish()
    }

    /// Registry indices selected by the grant, in registry order.
    pub(crate) fn granted_indices(&self) -> Vec<usize> {
        let n = self.registry.len();
        let mut ix: Vec<usize> = match &self.grant.tags {
            TagSelection::All => (0..n).collect(),
            TagSelection::Labels(l) => l.iter().filter_map(|l| self.registry.index_of_label(l)).collect(),
            TagSelection::Indices(ix) => ix.iter().copied().filter(|&i| i < n).collect(),
        };
        ix.sort_unstable();
        ix.dedup();
        ix
    }

    fn granted_temp_ids(&self) -> Vec<TempId> {
        let entries = self.registry.entries();
        self.granted_indices()
            .into_iter()
            .map(|i| derive_temp_id(self.mac, &entries[i].tag_id, self.grant.start))
            .collect()
    }

    /// Reads a scenario file. Relative registry paths resolve against the
    /// file's directory.
    pub fn from_file(path: &Path, mac: MacAlgorithm) -> Result<Self, ValidationError> {
        Self::load(path, mac, None).map(|(c, _)| c)
    }

    /// Like [`from_file`](Self::from_file), with `seed` taking precedence
    /// over the file's `[seed]`. With neither, a seed is drawn from the OS.
    pub fn load(path: &Path, mac: MacAlgorithm, seed: Option<u64>) -> Result<(Self, SeedSource), ValidationError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ValidationError::single("scenario", format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml_seeded(&text, base, mac, seed)
    }

    pub fn from_toml(text: &str, base_dir: &Path, mac: MacAlgorithm) -> Result<Self, ValidationError> {
        Self::from_toml_seeded(text, base_dir, mac, None).map(|(c, _)| c)
    }

    pub fn from_toml_seeded(
        text: &str,
        base_dir: &Path,
        mac: MacAlgorithm,
        seed: Option<u64>,
    ) -> Result<(Self, SeedSource), ValidationError> {
        let file: ScenarioFile = toml::from_str(text)
            .map_err(|e| ValidationError::single("scenario", e.to_string()))?;
        let (seed, source) = match (seed, file.seed.as_ref()) {
            (Some(s), _) => (s, SeedSource::Flag),
            (None, Some(s)) => (s.value, SeedSource::File),
            (None, None) => {
                let s = RandomSource::os()
                    .next_u64()
                    .map_err(|e| ValidationError::single("seed", e.to_string()))?;
                (s, SeedSource::Random)
            }
        };
        file.resolve(base_dir, mac, seed).map(|c| (c, source))
    }
}

/// Where a scenario's seed came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SeedSource {
    Flag,
    File,
    Random,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    seed: Option<SeedSection>,
    registry: Option<RegistrySection>,
    grant: Option<GrantSection>,
    #[serde(default)]
    schedule: Vec<ScheduleSection>,
    adversary: Option<AdversarySection>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SeedSection {
    value: u64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RegistrySection {
    path: Option<String>,
    generate: Option<usize>,
    manufactured_at: Option<u32>,
    provision_at: Option<u32>,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum TagsField {
    Keyword(String),
    Labels(Vec<String>),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct GrantSection {
    uav: Option<String>,
    tags: Option<TagsField>,
    t0: Option<u32>,
    tz: Option<u32>,
    ar: Option<String>,
    issued_at: Option<u32>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScheduleSection {
    at: Option<u32>,
    action: Option<String>,
    target: Option<String>,
    target_label: Option<String>,
    in_range: Option<Vec<String>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct AdversarySection {
    strategy: Option<String>,
    budget: Option<i64>,
    event: Option<u64>,
    drop: Option<Vec<String>>,
    compromised: Option<String>,
    tags: Option<Vec<String>>,
    trials: Option<u64>,
    observations: Option<usize>,
    protocol: Option<String>,
}

impl ScenarioFile {
    fn resolve(self, base_dir: &Path, mac: MacAlgorithm, seed: u64) -> Result<ScenarioConfig, ValidationError> {
        let mut issues = Issues::default();

        let mut registry = TagRegistry::new();
        let mut provision_at = None;
        match self.registry {
            None => issues.push("registry", "missing [registry] section"),
            Some(r) => {
                provision_at = r.provision_at.map(Timestamp32);
                match (r.path, r.generate) {
                    (Some(p), None) => {
                        let full = base_dir.join(&p);
                        match std::fs::read_to_string(&full) {
                            Err(e) => issues.push("registry.path", format!("{}: {e}", full.display())),
                            Ok(text) => match TagRegistry::parse(&text) {
                                Ok(reg) => registry = reg,
                                Err(e) => issues.push("registry.path", e.to_string()),
                            },
                        }
                    }
                    (None, Some(n)) => {
                        let at = Timestamp32(r.manufactured_at.unwrap_or(0));
                        // Separate stream so the registry does not shift protocol nonces.
                        match TagRegistry::generate(n, &mut RandomSource::seeded_stream(seed, 7), at) {
                            Ok(reg) => registry = reg,
                            Err(e) => issues.push("registry.generate", e.to_string()),
                        }
                    }
                    _ => issues.push("registry", "exactly one of `path` or `generate` is required"),
                }
            }
        }

        let mut grant = GrantSpec {
            uav_id: String::new(),
            tags: TagSelection::All,
            rights: AccessRights::default(),
            start: Timestamp32(0),
            end: Timestamp32(0),
            issued_at: None,
        };
        match self.grant {
            None => issues.push("grant", "missing [grant] section"),
            Some(g) => {
                match g.uav {
                    Some(u) => grant.uav_id = u,
                    None => issues.push("grant.uav", "missing"),
                }
                match g.tags {
                    None => issues.push("grant.tags", "missing"),
                    Some(TagsField::Keyword(k)) if k == "all" => grant.tags = TagSelection::All,
                    Some(TagsField::Keyword(k)) => grant.tags = TagSelection::Labels(vec![k]),
                    Some(TagsField::Labels(l)) => grant.tags = TagSelection::Labels(l),
                }
                match (g.t0, g.tz) {
                    (Some(a), Some(b)) => {
                        grant.start = Timestamp32(a);
                        grant.end = Timestamp32(b);
                    }
                    _ => issues.push("grant.t0", "both t0 and tz are required"),
                }
                match g.ar.as_deref().map(AccessRights::parse) {
                    None => issues.push("grant.ar", "missing"),
                    Some(Err(e)) => issues.push("grant.ar", e.to_string()),
                    Some(Ok(r)) => grant.rights = r,
                }
                grant.issued_at = g.issued_at.map(Timestamp32);
            }
        }

        let mut schedule = Vec::with_capacity(self.schedule.len());
        for (n, s) in self.schedule.into_iter().enumerate() {
            let field = |f: &str| format!("schedule[{n}].{f}");
            let Some(at) = s.at else {
                issues.push(field("at"), "missing");
                continue;
            };
            let action = match s.action.as_deref() {
                Some("auth-round") => {
                    if s.target.is_some() || s.target_label.is_some() {
                        issues.push(field("target"), "auth rounds take no target");
                    }
                    Action::AuthRound
                }
                Some("search") => match (s.target, s.target_label) {
                    (Some(hex), None) => match TempId::from_hex(&hex) {
                        Ok(target) => Action::Search { target },
                        Err(e) => {
                            issues.push(field("target"), e.to_string());
                            continue;
                        }
                    },
                    (None, Some(label)) => match registry.by_label(&label) {
                        Some(e) => Action::Search {
                            target: derive_temp_id(mac, &e.tag_id, grant.start),
                        },
                        None => {
                            issues.push(field("target_label"), format!("unknown tag label {label:?}"));
                            continue;
                        }
                    },
                    _ => {
                        issues.push(field("target"), "search needs exactly one of target or target_label");
                        continue;
                    }
                },
                Some(other) => {
                    issues.push(field("action"), format!("unknown action {other:?}"));
                    continue;
                }
                None => {
                    issues.push(field("action"), "missing");
                    continue;
                }
            };
            schedule.push(ScheduledAction {
                at: Timestamp32(at),
                action,
                in_range: s.in_range,
            });
        }

        let adversary = self.adversary.and_then(|a| {
            let strategy = match a.strategy.as_deref() {
                Some("eavesdrop") => Strategy::Eavesdrop,
                Some("replay") => Strategy::Replay { event: a.event },
                Some("masquerade-uav") => Strategy::MasqueradeUav,
                Some("counterfeit-tag") => match a.compromised {
                    Some(label) => Strategy::CounterfeitTag { compromised: label },
                    None => {
                        issues.push("adversary.compromised", "counterfeit-tag needs a compromised tag label");
                        return None;
                    }
                },
                Some("tracking-game") => {
                    let protocol = match a.protocol.as_deref() {
                        None => Protocol::Auth,
                        Some(p) => match Protocol::parse(p) {
                            Some(p) => p,
                            None => {
                                issues.push("adversary.protocol", format!("unknown protocol {p:?}"));
                                return None;
                            }
                        },
                    };
                    match a.tags.as_deref() {
                        Some([x, y]) => Strategy::TrackingGame {
                            tags: [x.clone(), y.clone()],
                            trials: a.trials.unwrap_or(1_000),
                            observations: a.observations.unwrap_or(4),
                            protocol,
                        },
                        _ => {
                            issues.push("adversary.tags", "tracking-game needs exactly two tag labels");
                            return None;
                        }
                    }
                }
                Some(other) => {
                    issues.push("adversary.strategy", format!("unknown strategy {other:?}"));
                    return None;
                }
                None => {
                    issues.push("adversary.strategy", "missing");
                    return None;
                }
            };
            let budget = match a.budget {
                Some(b) if b < 0 => {
                    issues.push("adversary.budget", "must be >= 0");
                    0
                }
                Some(b) => b as u64,
                None => DEFAULT_BUDGET,
            };
            let mut drop = Vec::new();
            for d in a.drop.unwrap_or_default() {
                match MessageKind::ALL.iter().find(|k| k.label() == d) {
                    Some(k) => drop.push(*k),
                    None => issues.push("adversary.drop", format!("unknown message kind {d:?}")),
                }
            }
            Some(AdversaryScript { strategy, budget, drop })
        });

        issues.finish()?;
        let config = ScenarioConfig {
            seed,
            mac,
            registry,
            grant,
            provision_at,
            schedule,
            adversary,
        };
        config.validate()?;
        Ok(config)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const GOOD: &str = r#"
[seed]
value = 9

[registry]
generate = 4
manufactured_at = 10
provision_at = 1001

[grant]
uav = "UAV-1"
tags = ["luggage-0000", "luggage-0002"]
t0 = 1000
tz = 2000
ar = "rw-"

[[schedule]]
at = 1100
action = "auth-round"

[[schedule]]
at = 1200
action = "search"
target_label = "luggage-0002"
in_range = ["luggage-0001", "luggage-0002"]
"#;

    #[test]
    fn parses_complete_scenario() {
        let c = ScenarioConfig::from_toml(GOOD, Path::new("."), MacAlgorithm::HmacSha1).unwrap();
        assert_eq!(c.seed, 9);
        assert_eq!(c.registry.len(), 4);
        assert_eq!(c.schedule.len(), 2);
        assert_eq!(c.grant.rights.bits(), 0b110);
        assert!(matches!(c.schedule[1].action, Action::Search { .. }));
    }

    #[test]
    fn collects_every_offending_field() {
        let bad = r#"
[registry]
generate = 2

[grant]
uav = "UAV 1"
tags = ["nope"]
t0 = 10
tz = 5
ar = "rwz"

[[schedule]]
at = 30
action = "fly"

[[schedule]]
action = "auth-round"
"#;
        let err = ScenarioConfig::from_toml(bad, Path::new("."), MacAlgorithm::HmacSha1).unwrap_err();
        let fields = err.fields();
        for f in ["grant.ar", "schedule[0].action", "schedule[1].at"] {
            assert!(fields.contains(&f), "{f} missing from {fields:?}");
        }
        // second pass catches semantic errors once syntax is fixed
        let semantic = bad.replace("rwz", "r").replace("fly", "auth-round").replace("[[schedule]]\naction = \"auth-round\"\n", "");
        let err = ScenarioConfig::from_toml(&semantic, Path::new("."), MacAlgorithm::HmacSha1).unwrap_err();
        let fields = err.fields();
        for f in ["grant.uav", "grant.tz", "grant.tags"] {
            assert!(fields.contains(&f), "{f} missing from {fields:?}");
        }
    }

    #[test]
    fn rejects_unknown_keys_and_sections() {
        let err = ScenarioConfig::from_toml("[bogus]\nx = 1\n", Path::new("."), MacAlgorithm::HmacSha1).unwrap_err();
        assert_eq!(err.fields(), vec!["scenario"]);
    }

    #[test]
    fn decreasing_schedule_is_invalid() {
        let text = GOOD.replace("at = 1200", "at = 1050");
        let err = ScenarioConfig::from_toml(&text, Path::new("."), MacAlgorithm::HmacSha1).unwrap_err();
        assert_eq!(err.fields(), vec!["schedule[1].at"]);
    }

    #[test]
    fn search_target_must_be_granted() {
        let text = GOOD.replace("target_label = \"luggage-0002\"", "target_label = \"luggage-0001\"");
        let err = ScenarioConfig::from_toml(&text, Path::new("."), MacAlgorithm::HmacSha1).unwrap_err();
        assert_eq!(err.fields(), vec!["schedule[1].target"]);
    }
}
