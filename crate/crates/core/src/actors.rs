//! Backend server, UAV and tag state, plus the grant key derivations.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::sync::Arc;

use thiserror::Error;

use crate::crypto::{truncate128, CryptoError, MacAlgorithm, RandomSource};
use crate::wire::{AccessRights, TagId, TagKey, TempId, TimeWindow, Timestamp32, WireError};

#[derive(Debug, Error)]
pub enum ActorError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("invalid window: end {end} must be after start {start}")]
    InvalidWindow { start: u32, end: u32 },
    #[error("unknown tag {0:?}")]
    UnknownTag(String),
    #[error("duplicate tag id {0}")]
    DuplicateTagId(String),
    #[error("duplicate tag label {0:?}")]
    DuplicateLabel(String),
    #[error("duplicate temporary id {0} in grant")]
    DuplicateTempId(String),
    #[error("timestamp would move backwards from {current} to {requested}")]
    Monotonicity { current: u32, requested: u32 },
    #[error("selection of {selected}/{total} tags exceeds the per-UAV fraction cap {cap}")]
    FractionCap {
        selected: usize,
        total: usize,
        cap: f64,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Wire(#[from] WireError),
    #[error(transparent)]
    Crypto(#[from] CryptoError),
}

/// `K = MAC_id(window || rights)`.
pub fn derive_tag_key(
    mac: MacAlgorithm,
    tag_id: &TagId,
    window: &TimeWindow,
    rights: &AccessRights,
) -> TagKey {
    TagKey(mac.mac_parts(tag_id.as_bytes(), &[&window.to_bytes(), &rights.to_bytes()]))
}

/// `temp = trunc128(MAC_id(start))`.
pub fn derive_temp_id(mac: MacAlgorithm, tag_id: &TagId, start: Timestamp32) -> TempId {
    TempId(truncate128(&mac.mac_parts(tag_id.as_bytes(), &[&start.to_bytes()])))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TagRegistryEntry {
    pub tag_id: TagId,
    pub label: String,
    pub manufactured_at: Timestamp32,
}

/// The server's list of legitimate tags, in insertion order.
///
/// File format, one tag per line: `tag_id_hex(32) SP manufactured_at SP label`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TagRegistry {
    entries: Vec<TagRegistryEntry>,
}

impl TagRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, entry: TagRegistryEntry) -> Result<(), ActorError> {
        if entry.label.trim().is_empty() {
            return Err(ActorError::InvalidArgument("tag label must not be empty".into()));
        }
        if self.entries.iter().any(|e| e.tag_id == entry.tag_id) {
            return Err(ActorError::DuplicateTagId(entry.tag_id.to_hex()));
        }
        if self.entries.iter().any(|e| e.label == entry.label) {
            return Err(ActorError::DuplicateLabel(entry.label));
        }
        self.entries.push(entry);
        Ok(())
    }

    /// `count` random tags labelled `luggage-0000`, `luggage-0001`, ...
    /// Id collisions are redrawn, never emitted.
    pub fn generate(
        count: usize,
        rng: &mut RandomSource,
        manufactured_at: Timestamp32,
    ) -> Result<Self, ActorError> {
        if count == 0 {
            return Err(ActorError::InvalidArgument("registry needs at least one tag".into()));
        }
        let mut registry = Self::new();
        let mut seen = HashSet::with_capacity(count);
        while registry.len() < count {
            let mut id = [0u8; 16];
            rng.fill(&mut id)?;
            if !seen.insert(id) {
                continue;
            }
            let label = format!("luggage-{:04}", registry.len());
            registry.push(TagRegistryEntry {
                tag_id: TagId(id),
                label,
                manufactured_at,
            })?;
        }
        Ok(registry)
    }

    pub fn entries(&self) -> &[TagRegistryEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn index_of_label(&self, label: &str) -> Option<usize> {
        self.entries.iter().position(|e| e.label == label)
    }

    pub fn by_label(&self, label: &str) -> Option<&TagRegistryEntry> {
        self.entries.iter().find(|e| e.label == label)
    }

    pub fn contains_id(&self, id: &TagId) -> bool {
        self.entries.iter().any(|e| &e.tag_id == id)
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            let _ = writeln!(out, "{} {} {}", e.tag_id.to_hex(), e.manufactured_at, e.label);
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self, ActorError> {
        let mut registry = Self::new();
        for (i, line) in text.lines().enumerate() {
            let line_no = i + 1;
            if line.trim().is_empty() {
                continue;
            }
            let parse_err = |message: String| ActorError::Parse {
                line: line_no,
                message,
            };
            let mut fields = line.splitn(3, ' ');
            let (Some(id), Some(ts), Some(label)) = (fields.next(), fields.next(), fields.next())
            else {
                return Err(parse_err("expected `tag_id manufactured_at label`".into()));
            };
            if id.len() != 32 {
                return Err(parse_err(format!("tag id must be 32 hex chars, got {}", id.len())));
            }
            let tag_id = TagId::from_hex(id).map_err(|e| parse_err(e.to_string()))?;
            let manufactured_at = ts
                .parse::<u32>()
                .map(Timestamp32)
                .map_err(|e| parse_err(format!("bad timestamp {ts:?}: {e}")))?;
            registry
                .push(TagRegistryEntry {
                    tag_id,
                    label: label.to_string(),
                    manufactured_at,
                })
                .map_err(|e| parse_err(e.to_string()))?;
        }
        Ok(registry)
    }
}

/// Everything a tag stores: its secret id and the last accepted timestamp.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TagState {
    tag_id: TagId,
    t_sys: Timestamp32,
    /// K' derived during the current handshake, dropped when it ends.
    pub(crate) derived_key_cache: Option<TagKey>,
}

impl TagState {
    pub fn new(tag_id: TagId, t_sys: Timestamp32) -> Self {
        Self {
            tag_id,
            t_sys,
            derived_key_cache: None,
        }
    }

    pub fn from_entry(entry: &TagRegistryEntry) -> Self {
        Self::new(entry.tag_id, entry.manufactured_at)
    }

    pub fn t_sys(&self) -> Timestamp32 {
        self.t_sys
    }

    pub(crate) fn tag_id(&self) -> &TagId {
        &self.tag_id
    }

    /// Models a physical attack that reads out the tag's memory.
    pub fn extract_secrets(&self) -> (TagId, Timestamp32) {
        (self.tag_id, self.t_sys)
    }

    /// Moves `T_SYS` forward into an operational epoch. Factory timestamps
    /// predate every window, so a tag must be provisioned before first use.
    pub fn provision(&mut self, bootstrap_time: Timestamp32) -> Result<(), ActorError> {
        if bootstrap_time < self.t_sys {
            return Err(ActorError::Monotonicity {
                current: self.t_sys.0,
                requested: bootstrap_time.0,
            });
        }
        self.t_sys = bootstrap_time;
        Ok(())
    }

    pub(crate) fn advance_to(&mut self, t: Timestamp32) {
        debug_assert!(t >= self.t_sys, "T_SYS must never decrease");
        self.t_sys = t;
    }

    /// Mass-authentication guard: `start < T_SYS < end`.
    pub fn check_auth_window(&self, window: &TimeWindow) -> bool {
        window.end() > self.t_sys && self.t_sys > window.start()
    }

    /// Search guard: `start < T_SYS < t_j < end`.
    pub fn check_search_window(&self, window: &TimeWindow, t_j: Timestamp32) -> bool {
        window.end() > self.t_sys
            && window.end() > t_j
            && t_j > self.t_sys
            && self.t_sys > window.start()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GrantEntry {
    pub temp_id: TempId,
    pub key: TagKey,
}

/// What a UAV receives from the server: its tag list, window and rights.
///
/// Dump format: header `uav_id T0 TZ AR_hex(32)`, then one
/// `temp_id_hex(32) key_hex(40)` line per entry.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AccessGrant {
    uav_id: String,
    window: TimeWindow,
    rights: AccessRights,
    entries: Vec<GrantEntry>,
}

impl AccessGrant {
    pub fn new(
        uav_id: impl Into<String>,
        window: TimeWindow,
        rights: AccessRights,
        entries: Vec<GrantEntry>,
    ) -> Result<Self, ActorError> {
        let uav_id = uav_id.into();
        if uav_id.is_empty() || uav_id.contains(char::is_whitespace) {
            return Err(ActorError::InvalidArgument(format!(
                "UAV id {uav_id:?} must be non-empty and contain no whitespace"
            )));
        }
        if entries.is_empty() {
            return Err(ActorError::InvalidArgument("grant has no entries".into()));
        }
        let mut seen = HashSet::with_capacity(entries.len());
        for e in &entries {
            if !seen.insert(e.temp_id) {
                return Err(ActorError::DuplicateTempId(e.temp_id.to_hex()));
            }
        }
        Ok(Self {
            uav_id,
            window,
            rights,
            entries,
        })
    }

    pub fn uav_id(&self) -> &str {
        &self.uav_id
    }

    pub fn window(&self) -> &TimeWindow {
        &self.window
    }

    pub fn rights(&self) -> &AccessRights {
        &self.rights
    }

    pub fn entries(&self) -> &[GrantEntry] {
        &self.entries
    }

    pub fn find(&self, temp_id: &TempId) -> Option<&GrantEntry> {
        self.entries.iter().find(|e| &e.temp_id == temp_id)
    }

    /// For each entry, the index of the unique registry tag that reproduces
    /// both its temporary id and its key.
    pub fn matching_registry_tags(
        &self,
        registry: &TagRegistry,
        mac: MacAlgorithm,
    ) -> Result<Vec<usize>, ActorError> {
        let derived: Vec<GrantEntry> = registry
            .entries()
            .iter()
            .map(|r| GrantEntry {
                temp_id: derive_temp_id(mac, &r.tag_id, self.window.start()),
                key: derive_tag_key(mac, &r.tag_id, &self.window, &self.rights),
            })
            .collect();
        self.entries
            .iter()
            .map(|e| {
                let mut hits = derived.iter().enumerate().filter(|(_, d)| *d == e);
                match (hits.next(), hits.next()) {
                    (Some((i, _)), None) => Ok(i),
                    _ => Err(ActorError::UnknownTag(e.temp_id.to_hex())),
                }
            })
            .collect()
    }

    pub fn render(&self) -> String {
        let mut out = format!(
            "{} {} {} {}\n",
            self.uav_id,
            self.window.start(),
            self.window.end(),
            hex::encode(self.rights.to_bytes())
        );
        for e in &self.entries {
            let _ = writeln!(out, "{} {}", e.temp_id.to_hex(), e.key.to_hex());
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self, ActorError> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines.next().ok_or(ActorError::Parse {
            line: 1,
            message: "missing grant header".into(),
        })?;
        let perr = |line: usize, message: String| ActorError::Parse { line, message };
        let fields: Vec<&str> = header.split(' ').collect();
        let [uav, t0, tz, ar] = fields[..] else {
            return Err(perr(1, "header must be `uav_id T0 TZ AR_hex`".into()));
        };
        let ts = |s: &str| {
            s.parse::<u32>()
                .map(Timestamp32)
                .map_err(|e| perr(1, format!("bad timestamp {s:?}: {e}")))
        };
        let (start, end) = (ts(t0)?, ts(tz)?);
        let window = TimeWindow::new(start, end).map_err(|e| perr(1, e.to_string()))?;
        if ar.len() != 32 {
            return Err(perr(1, "access rights must be 32 hex chars".into()));
        }
        let rights = AccessRights::parse(ar).map_err(|e| perr(1, e.to_string()))?;
        let mut entries = Vec::new();
        for (i, line) in lines {
            let line_no = i + 1;
            let Some((temp, key)) = line.split_once(' ') else {
                return Err(perr(line_no, "expected `temp_id_hex key_hex`".into()));
            };
            entries.push(GrantEntry {
                temp_id: TempId::from_hex(temp).map_err(|e| perr(line_no, e.to_string()))?,
                key: TagKey::from_hex(key).map_err(|e| perr(line_no, e.to_string()))?,
            });
        }
        Self::new(uav, window, rights, entries)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TagSelection {
    All,
    Labels(Vec<String>),
    Indices(Vec<usize>),
}

#[derive(Debug, Clone)]
pub struct GrantRecord {
    pub uav_id: String,
    pub issued_at: Timestamp32,
    pub window: TimeWindow,
    pub rights: AccessRights,
    pub tag_indices: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct IssuedGrant {
    pub grant: AccessGrant,
    /// Server time handed to the UAV as its clock base.
    pub clock_sync: Timestamp32,
}

/// The trusted, offline-after-issuance authority.
#[derive(Debug, Clone)]
pub struct BackendServer {
    registry: TagRegistry,
    mac: MacAlgorithm,
    fraction_cap: Option<f64>,
    audit: Vec<GrantRecord>,
}

impl BackendServer {
    pub fn new(registry: TagRegistry, mac: MacAlgorithm) -> Self {
        Self {
            registry,
            mac,
            fraction_cap: None,
            audit: Vec::new(),
        }
    }

    /// Refuse grants covering more than `cap` (0, 1] of the registry.
    pub fn with_fraction_cap(mut self, cap: f64) -> Self {
        self.fraction_cap = Some(cap);
        self
    }

    pub fn registry(&self) -> &TagRegistry {
        &self.registry
    }

    pub fn mac(&self) -> MacAlgorithm {
        self.mac
    }

    pub fn audit_log(&self) -> &[GrantRecord] {
        &self.audit
    }

    fn resolve(&self, selection: &TagSelection) -> Result<Vec<usize>, ActorError> {
        let mut indices: Vec<usize> = match selection {
            TagSelection::All => (0..self.registry.len()).collect(),
            TagSelection::Labels(labels) => labels
                .iter()
                .map(|l| {
                    self.registry
                        .index_of_label(l)
                        .ok_or_else(|| ActorError::UnknownTag(l.clone()))
                })
                .collect::<Result<_, _>>()?,
            TagSelection::Indices(ix) => {
                if let Some(bad) = ix.iter().find(|&&i| i >= self.registry.len()) {
                    return Err(ActorError::UnknownTag(format!("#{bad}")));
                }
                ix.clone()
            }
        };
        // Registry order, duplicates collapsed.
        indices.sort_unstable();
        indices.dedup();
        Ok(indices)
    }

    pub fn issue_grant(
        &mut self,
        uav_id: &str,
        selection: &TagSelection,
        rights: AccessRights,
        start: Timestamp32,
        end: Timestamp32,
        now: Timestamp32,
    ) -> Result<IssuedGrant, ActorError> {
        let indices = self.resolve(selection)?;
        if indices.is_empty() {
            return Err(ActorError::InvalidArgument("tag selection is empty".into()));
        }
        if end <= start {
            return Err(ActorError::InvalidWindow {
                start: start.0,
                end: end.0,
            });
        }
        if let Some(cap) = self.fraction_cap {
            let fraction = indices.len() as f64 / self.registry.len() as f64;
            if fraction > cap {
                return Err(ActorError::FractionCap {
                    selected: indices.len(),
                    total: self.registry.len(),
                    cap,
                });
            }
        }
        let window = TimeWindow::new(start, end)?;
        let entries = indices
            .iter()
            .map(|&i| {
                let id = &self.registry.entries()[i].tag_id;
                GrantEntry {
                    temp_id: derive_temp_id(self.mac, id, start),
                    key: derive_tag_key(self.mac, id, &window, &rights),
                }
            })
            .collect();
        let grant = AccessGrant::new(uav_id, window, rights, entries)?;
        self.audit.push(GrantRecord {
            uav_id: uav_id.to_string(),
            issued_at: now,
            window,
            rights,
            tag_indices: indices,
        });
        Ok(IssuedGrant {
            grant,
            clock_sync: now,
        })
    }
}

#[derive(Debug, Clone)]
pub struct UavState {
    uav_id: String,
    grant: Option<Arc<AccessGrant>>,
    clock_base: Option<Timestamp32>,
}

impl UavState {
    pub fn new(uav_id: impl Into<String>) -> Self {
        Self {
            uav_id: uav_id.into(),
            grant: None,
            clock_base: None,
        }
    }

    pub fn with_grant(issued: IssuedGrant) -> Self {
        let mut uav = Self::new(issued.grant.uav_id());
        uav.install(issued);
        uav
    }

    pub fn install(&mut self, issued: IssuedGrant) {
        self.clock_base = Some(issued.clock_sync);
        self.grant = Some(Arc::new(issued.grant));
    }

    pub fn uav_id(&self) -> &str {
        &self.uav_id
    }

    pub fn grant(&self) -> Option<&Arc<AccessGrant>> {
        self.grant.as_ref()
    }

    pub fn clock_base(&self) -> Option<Timestamp32> {
        self.clock_base
    }
}
