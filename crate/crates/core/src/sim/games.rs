//! Executable versions of the three attack games plus the replay/desync
//! probe.
//!
//! Games 1 and 2 are pass/fail: a single adversary win is a defect. Game 3
//! is statistical: each shipped distinguisher must stay inside a binomial
//! envelope around 1/2. The distinguishers are concrete algorithms, so the
//! game shows indistinguishability against these attacks only.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::sync::Arc;

use crate::actors::{derive_tag_key, AccessGrant, IssuedGrant, TagRegistry, TagState, UavState};
use crate::crypto::{truncate128, MacAlgorithm, RandomSource};
use crate::protocol::{OpCounters, ProtocolEngine, ScanOutcome};
use crate::sim::{Protocol, SimError, ValidationError};
use crate::wire::{
    AuthA, AuthB, AuthC, MacTag, Nonce128, SearchA, SearchB, TagId, Timestamp32,
};

/// Smallest `TZ - T0` the games accept.
pub const MIN_WINDOW_SECS: u32 = 32;

/// Tracking sessions are 1 to this many seconds apart.
const MAX_SESSION_GAP: u32 = 3;

/// Half-width of the Game-3 acceptance envelope at `n` trials:
/// `1.3 / sqrt(n)`, i.e. `[0.487, 0.513]` at n = 10,000.
pub fn envelope_half_width(trials: u64) -> f64 {
    1.3 / (trials.max(1) as f64).sqrt()
}

#[derive(Debug, Clone, PartialEq)]
pub struct GameResult {
    pub game: u8,
    pub protocol: Protocol,
    pub strategy: String,
    pub trials: u64,
    pub adversary_wins: u64,
    /// Side tallies such as sanity-arm acceptances.
    pub notes: Vec<(String, u64)>,
}

impl GameResult {
    fn new(game: u8, protocol: Protocol, strategy: &str, trials: u64) -> Self {
        Self {
            game,
            protocol,
            strategy: strategy.to_string(),
            trials,
            adversary_wins: 0,
            notes: Vec::new(),
        }
    }

    pub fn win_rate(&self) -> f64 {
        if self.trials == 0 {
            return 0.0;
        }
        self.adversary_wins as f64 / self.trials as f64
    }

    /// Wilson score interval at 95%.
    pub fn confidence95(&self) -> (f64, f64) {
        let n = self.trials as f64;
        if n == 0.0 {
            return (0.0, 1.0);
        }
        let z = 1.959_964;
        let p = self.win_rate();
        let denom = 1.0 + z * z / n;
        let centre = (p + z * z / (2.0 * n)) / denom;
        let half = z * (p * (1.0 - p) / n + z * z / (4.0 * n * n)).sqrt() / denom;
        ((centre - half).max(0.0), (centre + half).min(1.0))
    }

    pub fn envelope(&self) -> (f64, f64) {
        let h = envelope_half_width(self.trials);
        (0.5 - h, 0.5 + h)
    }

    pub fn passed(&self) -> bool {
        match self.game {
            3 => {
                let (lo, hi) = self.envelope();
                (lo..=hi).contains(&self.win_rate())
            }
            _ => self.adversary_wins == 0,
        }
    }

    pub fn note(&self, key: &str) -> Option<u64> {
        self.notes.iter().find(|(k, _)| k == key).map(|(_, v)| *v)
    }

    pub fn render(&self) -> String {
        let prefix = format!("game{}.{}.{}", self.game, self.protocol, self.strategy);
        let (lo, hi) = self.confidence95();
        let mut out = String::new();
        let _ = writeln!(out, "{prefix}.trials={}", self.trials);
        let _ = writeln!(out, "{prefix}.adversary_wins={}", self.adversary_wins);
        let _ = writeln!(out, "{prefix}.win_rate={:.6}", self.win_rate());
        let _ = writeln!(out, "{prefix}.ci95={lo:.6},{hi:.6}");
        if self.game == 3 {
            let (a, b) = self.envelope();
            let _ = writeln!(out, "{prefix}.envelope={a:.6},{b:.6}");
        }
        for (k, v) in &self.notes {
            let _ = writeln!(out, "{prefix}.{k}={v}");
        }
        let _ = writeln!(out, "{prefix}.verdict={}", if self.passed() { "PASS" } else { "FAIL" });
        out
    }
}

/// Shared fixture: a registry, one grant over part of it, and fresh tag
/// copies provisioned to `T0 + 1` for every trial.
#[derive(Debug, Clone)]
pub struct GameSetup {
    engine: ProtocolEngine,
    registry: TagRegistry,
    grant: Arc<AccessGrant>,
    /// Registry index of each grant entry.
    granted: Vec<usize>,
    uav: UavState,
}

impl GameSetup {
    pub fn new(registry: TagRegistry, grant: AccessGrant, mac: MacAlgorithm) -> Result<Self, SimError> {
        let window = *grant.window();
        if window.end().0 - window.start().0 < MIN_WINDOW_SECS {
            return Err(ValidationError::single(
                "grant",
                format!("games need a window of at least {MIN_WINDOW_SECS} s"),
            )
            .into());
        }
        let granted = grant.matching_registry_tags(&registry, mac)?;
        let uav = UavState::with_grant(IssuedGrant {
            grant: grant.clone(),
            clock_sync: window.start(),
        });
        Ok(Self {
            engine: ProtocolEngine::new(mac),
            registry,
            grant: Arc::new(grant),
            granted,
            uav,
        })
    }

    pub fn grant(&self) -> &AccessGrant {
        &self.grant
    }

    pub fn registry(&self) -> &TagRegistry {
        &self.registry
    }

    pub fn engine(&self) -> &ProtocolEngine {
        &self.engine
    }

    /// Position within the grant of the tag with this label.
    pub fn grant_position(&self, label: &str) -> Option<usize> {
        let idx = self.registry.index_of_label(label)?;
        self.granted.iter().position(|&i| i == idx)
    }

    pub(crate) fn at(&self, offset: u32) -> Timestamp32 {
        self.grant.window().start().saturating_add(offset)
    }

    pub(crate) fn fresh_tag(&self, pos: usize) -> TagState {
        let entry = &self.registry.entries()[self.granted[pos]];
        let mut tag = TagState::new(entry.tag_id, entry.manufactured_at);
        // Provisioning only fails if the factory time is already past T0 + 1.
        let _ = tag.provision(self.at(1));
        tag
    }

    fn mac(&self) -> MacAlgorithm {
        self.engine.mac_algorithm()
    }

    fn random_mac(rng: &mut RandomSource) -> Result<MacTag, SimError> {
        let mut m = [0u8; 20];
        rng.fill(&mut m)?;
        Ok(MacTag::from_bytes(m))
    }
}

struct AuthTranscript {
    a: AuthA,
    b: AuthB,
    c: AuthC,
}

fn honest_auth(
    setup: &GameSetup,
    tag: &mut TagState,
    now: Timestamp32,
    rng: &mut RandomSource,
) -> Result<AuthTranscript, SimError> {
    let e = &setup.engine;
    let mut c = OpCounters::default();
    let (a, mut uav_s) = e.auth_uav_start(&setup.uav, rng, &mut c)?;
    let (b, mut tag_s) = e
        .auth_tag_respond(tag, &a, rng, &mut c)?
        .expect("provisioned granted tag answers an in-window A");
    let ScanOutcome::Authorized { reply, .. } = e.auth_uav_process_b(&mut uav_s, &b, now, &mut c)? else {
        unreachable!("granted tag is in the list");
    };
    e.auth_tag_finish(&mut tag_s, tag, &reply, &mut c)
        .expect("honest C verifies");
    Ok(AuthTranscript { a, b, c: reply })
}

struct SearchTranscript {
    sa: SearchA,
    sb: SearchB,
}

fn honest_search(
    setup: &GameSetup,
    pos: usize,
    tag: &mut TagState,
    now: Timestamp32,
    rng: &mut RandomSource,
) -> Result<SearchTranscript, SimError> {
    let e = &setup.engine;
    let mut c = OpCounters::default();
    let target = setup.grant.entries()[pos].temp_id;
    let (sa, pending) = e.search_uav_start(&setup.uav, &target, now, &mut c)?;
    let reply = e
        .search_tag_respond(tag, &sa, rng, &mut c)?
        .expect("target tag answers a fresh query");
    e.search_uav_finish(&pending, &reply.reply, &mut c)
        .expect("honest B verifies");
    Ok(SearchTranscript { sa, sb: reply.reply })
}

const GAME1_AUTH: [&str; 3] = ["replay", "forge", "splice"];

/// Game 1: the adversary has eavesdropped two honest sessions with the
/// target tag and tries to make it accept a UAV message. A win is any
/// timestamp update or session-key derivation on the tag.
pub fn play_game1_masquerade(
    setup: &GameSetup,
    trials: u64,
    protocol: Protocol,
    seed: u64,
) -> Result<GameResult, SimError> {
    let mut honest = RandomSource::seeded_stream(seed, 11);
    let mut adv = RandomSource::seeded_stream(seed, 12);
    let mut result = GameResult::new(1, protocol, "combined", trials);
    let mut per_strategy = [0u64; 3];
    let e = &setup.engine;
    let n = setup.granted.len();
    for trial in 0..trials {
        let pos = trial as usize % n;
        let mut tag = setup.fresh_tag(pos);
        let mut scratch = OpCounters::default();
        let mut won = [false; 3];
        match protocol {
            Protocol::Auth => {
                let s1 = honest_auth(setup, &mut tag, setup.at(2), &mut honest)?;
                let s2 = honest_auth(setup, &mut tag, setup.at(3), &mut honest)?;
                let t_before = tag.t_sys();
                let attempts: [(usize, AuthA, Vec<AuthC>); 3] = [
                    (0, s1.a, vec![s1.c, s2.c]),
                    (
                        1,
                        AuthA {
                            uav_nonce: adv.nonce()?,
                            ..s1.a
                        },
                        vec![AuthC {
                            uav_mac: GameSetup::random_mac(&mut adv)?,
                            timestamp: setup.at(4),
                        }],
                    ),
                    (
                        2,
                        s2.a,
                        vec![
                            AuthC { uav_mac: s1.c.uav_mac, timestamp: s2.c.timestamp },
                            AuthC { uav_mac: s2.c.uav_mac, timestamp: s1.c.timestamp },
                            AuthC { uav_mac: s2.b.tag_mac, timestamp: setup.at(4) },
                        ],
                    ),
                ];
                for (strategy, a, cs) in attempts {
                    let Some((b, mut session)) = e.auth_tag_respond(&mut tag, &a, &mut honest, &mut scratch)? else {
                        continue;
                    };
                    // Reflection: echo the tag's own MAC back as V.
                    let reflect = AuthC { uav_mac: b.tag_mac, timestamp: setup.at(4) };
                    for c in cs.iter().chain(std::iter::once(&reflect)) {
                        if e.auth_tag_finish(&mut session, &mut tag, c, &mut scratch).is_some() {
                            won[strategy] = true;
                        }
                    }
                    if tag.t_sys() != t_before {
                        won[strategy] = true;
                    }
                }
            }
            Protocol::Search => {
                let s1 = honest_search(setup, pos, &mut tag, setup.at(2), &mut honest)?;
                let s2 = honest_search(setup, pos, &mut tag, setup.at(3), &mut honest)?;
                let t_before = tag.t_sys();
                let fresh = setup.at(4);
                let attempts: [(usize, SearchA); 7] = [
                    (0, s1.sa),
                    (0, s2.sa),
                    (1, SearchA { query_mac: GameSetup::random_mac(&mut adv)?, timestamp: fresh, ..s1.sa }),
                    (2, SearchA { timestamp: fresh, ..s1.sa }),
                    (2, SearchA { timestamp: fresh, ..s2.sa }),
                    (2, SearchA { query_mac: s2.sb.tag_mac, timestamp: fresh, ..s2.sa }),
                    (2, SearchA { query_mac: s1.sb.tag_mac, timestamp: s2.sa.timestamp, ..s2.sa }),
                ];
                for (strategy, sa) in attempts {
                    if e.search_tag_respond(&mut tag, &sa, &mut honest, &mut scratch)?.is_some()
                        || tag.t_sys() != t_before
                    {
                        won[strategy] = true;
                    }
                }
            }
        }
        for (s, w) in won.iter().enumerate() {
            per_strategy[s] += u64::from(*w);
        }
        result.adversary_wins += u64::from(won.iter().any(|w| *w));
    }
    for (name, wins) in GAME1_AUTH.iter().zip(per_strategy) {
        result.notes.push((format!("{name}_wins"), wins));
    }
    Ok(result)
}

fn flip_bits(id: &TagId, rng: &mut RandomSource) -> Result<TagId, SimError> {
    let mut bytes = *id.as_bytes();
    let flips = 1 + (rng.next_u64()? % 3) as usize;
    let mut used = HashSet::new();
    while used.len() < flips {
        let bit = (rng.next_u64()? % 128) as usize;
        if used.insert(bit) {
            bytes[bit / 8] ^= 1 << (bit % 8);
        }
    }
    Ok(TagId::from_bytes(bytes))
}

/// A counterfeit tag's best effort at a `SearchB`: a proof under the key
/// its fabricated id derives for this grant.
fn counterfeit_search_reply(
    mac: MacAlgorithm,
    fake: &TagId,
    sa: &SearchA,
    rng: &mut RandomSource,
) -> Result<SearchB, SimError> {
    let key = derive_tag_key(mac, fake, &sa.window, &sa.rights);
    let tag_nonce = rng.nonce()?;
    let tag_mac = MacTag::from_bytes(mac.mac_parts(
        key.as_bytes(),
        &[&sa.timestamp.to_bytes(), tag_nonce.as_bytes()],
    ));
    Ok(SearchB { tag_mac, tag_nonce })
}

/// Game 2: the adversary holds the full memory of one granted tag and
/// fabricates new tags from it. A win is the UAV authenticating a tag whose
/// id is not in the registry.
///
/// Every 100th trial also runs two control arms that are not wins: the
/// compromised tag itself, and a clone of it under a different label.
pub fn play_game2_counterfeit(
    setup: &GameSetup,
    trials: u64,
    protocol: Protocol,
    seed: u64,
) -> Result<GameResult, SimError> {
    let mut honest = RandomSource::seeded_stream(seed, 21);
    let mut adv = RandomSource::seeded_stream(seed, 22);
    let mut result = GameResult::new(2, protocol, "fabricate", trials);
    let e = &setup.engine;
    let mac = setup.mac();
    let compromised_tag = setup.fresh_tag(0);
    let (compromised_id, compromised_t) = compromised_tag.extract_secrets();
    let (mut sanity_runs, mut sanity_accepts, mut clone_accepts) = (0u64, 0u64, 0u64);
    let n = setup.granted.len();

    for trial in 0..trials {
        let fake_id = loop {
            let candidate = if trial % 2 == 0 {
                let mut b = [0u8; 16];
                adv.fill(&mut b)?;
                TagId::from_bytes(b)
            } else {
                flip_bits(&compromised_id, &mut adv)?
            };
            if !setup.registry.contains_id(&candidate) {
                break candidate;
            }
        };
        let control = trial % 100 == 0;
        let mut c = OpCounters::default();
        match protocol {
            Protocol::Auth => {
                let (a, mut uav_s) = e.auth_uav_start(&setup.uav, &mut honest, &mut c)?;
                let mut fake = TagState::new(fake_id, compromised_t);
                if let Some((b, _)) = e.auth_tag_respond(&mut fake, &a, &mut adv, &mut c)? {
                    if let ScanOutcome::Authorized { .. } = e.auth_uav_process_b(&mut uav_s, &b, setup.at(2), &mut c)? {
                        result.adversary_wins += 1;
                    }
                }
                if control {
                    sanity_runs += 1;
                    let mut genuine = compromised_tag.clone();
                    let mut clone = TagState::new(compromised_id, compromised_t);
                    for (tag, tally) in [(&mut genuine, &mut sanity_accepts), (&mut clone, &mut clone_accepts)] {
                        if let Some((b, _)) = e.auth_tag_respond(tag, &a, &mut adv, &mut c)? {
                            if let ScanOutcome::Authorized { .. } = e.auth_uav_process_b(&mut uav_s, &b, setup.at(2), &mut c)? {
                                *tally += 1;
                            }
                        }
                    }
                }
            }
            Protocol::Search => {
                let pos = trial as usize % n;
                let target = setup.grant.entries()[pos].temp_id;
                let (sa, pending) = e.search_uav_start(&setup.uav, &target, setup.at(2), &mut c)?;
                let forged = counterfeit_search_reply(mac, &fake_id, &sa, &mut adv)?;
                if e.search_uav_finish(&pending, &forged, &mut c).is_some() {
                    result.adversary_wins += 1;
                }
                if control {
                    sanity_runs += 1;
                    let own = setup.grant.entries()[0].temp_id;
                    let (sa, pending) = e.search_uav_start(&setup.uav, &own, setup.at(2), &mut c)?;
                    let mut genuine = compromised_tag.clone();
                    if let Some(r) = e.search_tag_respond(&mut genuine, &sa, &mut adv, &mut c)? {
                        if e.search_uav_finish(&pending, &r.reply, &mut c).is_some() {
                            sanity_accepts += 1;
                        }
                    }
                    let clone_reply = counterfeit_search_reply(mac, &compromised_id, &sa, &mut adv)?;
                    if e.search_uav_finish(&pending, &clone_reply, &mut c).is_some() {
                        clone_accepts += 1;
                    }
                }
            }
        }
    }
    result.notes.push(("sanity_runs".into(), sanity_runs));
    result.notes.push(("sanity_accepts".into(), sanity_accepts));
    result.notes.push(("clone_accepts".into(), clone_accepts));
    Ok(result)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TagVariant {
    Honest,
    /// Deliberately broken: the tag's nonce is a fixed function of its id,
    /// like protocols whose tags answer with a constant value.
    StaticResponse,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Distinguisher {
    /// Looks for any challenge field already seen from exactly one tag.
    PayloadEquality,
    /// Per-position byte histograms per tag; picks the higher likelihood.
    ByteFrequency,
}

impl Distinguisher {
    pub const ALL: [Distinguisher; 2] = [Distinguisher::PayloadEquality, Distinguisher::ByteFrequency];

    pub fn name(self) -> &'static str {
        match self {
            Distinguisher::PayloadEquality => "equality",
            Distinguisher::ByteFrequency => "frequency",
        }
    }

    fn guess(self, history: &[Vec<Observation>; 2], challenge: &Observation, coin: &mut RandomSource) -> Result<usize, SimError> {
        let decided = match self {
            Distinguisher::PayloadEquality => {
                let seen: [HashSet<&[u8]>; 2] = [0, 1].map(|k| {
                    history[k]
                        .iter()
                        .flat_map(|o| o.fields.iter().map(Vec::as_slice))
                        .collect()
                });
                let hit = |k: usize| challenge.fields.iter().any(|f| seen[k].contains(f.as_slice()));
                match (hit(0), hit(1)) {
                    (true, false) => Some(0),
                    (false, true) => Some(1),
                    _ => None,
                }
            }
            Distinguisher::ByteFrequency => {
                let bytes = challenge.flat();
                let score = |k: usize| -> f64 {
                    let obs = &history[k];
                    let total = obs.len() as f64 + 256.0;
                    bytes
                        .iter()
                        .enumerate()
                        .map(|(pos, &x)| {
                            let count = obs.iter().filter(|o| o.flat().get(pos) == Some(&x)).count();
                            ((count as f64 + 1.0) / total).ln()
                        })
                        .sum()
                };
                let (s0, s1) = (score(0), score(1));
                if (s0 - s1).abs() < 1e-9 {
                    None
                } else if s0 > s1 {
                    Some(0)
                } else {
                    Some(1)
                }
            }
        };
        match decided {
            Some(k) => Ok(k),
            None => Ok((coin.next_u64()? & 1) as usize),
        }
    }
}

/// Tag-dependent fields the adversary sees in one session.
#[derive(Debug, Clone)]
struct Observation {
    fields: Vec<Vec<u8>>,
}

impl Observation {
    fn flat(&self) -> Vec<u8> {
        self.fields.concat()
    }
}

fn static_nonce(mac: MacAlgorithm, tag: &TagState) -> Nonce128 {
    Nonce128::from_bytes(truncate128(&mac.mac_parts(tag.tag_id().as_bytes(), &[b"static-nonce"])))
}

fn observe_session(
    setup: &GameSetup,
    pos: usize,
    tag: &mut TagState,
    now: Timestamp32,
    protocol: Protocol,
    variant: TagVariant,
    rng: &mut RandomSource,
) -> Result<Observation, SimError> {
    let e = &setup.engine;
    let mac = setup.mac();
    let mut c = OpCounters::default();
    let fields = match (protocol, variant) {
        (Protocol::Auth, TagVariant::Honest) => {
            let t = honest_auth(setup, tag, now, rng)?;
            vec![t.b.tag_mac.as_bytes().to_vec(), t.b.tag_nonce.as_bytes().to_vec(), t.c.uav_mac.as_bytes().to_vec()]
        }
        (Protocol::Auth, TagVariant::StaticResponse) => {
            let (a, mut uav_s) = e.auth_uav_start(&setup.uav, rng, &mut c)?;
            let k = derive_tag_key(mac, tag.tag_id(), &a.window, &a.rights);
            let tag_nonce = static_nonce(mac, tag);
            let tag_mac = MacTag::from_bytes(mac.mac_parts(k.as_bytes(), &[tag_nonce.as_bytes(), a.uav_nonce.as_bytes()]));
            let b = AuthB { tag_mac, tag_nonce };
            let ScanOutcome::Authorized { reply, .. } = e.auth_uav_process_b(&mut uav_s, &b, now, &mut c)? else {
                unreachable!("static tag still holds a granted key");
            };
            vec![b.tag_mac.as_bytes().to_vec(), b.tag_nonce.as_bytes().to_vec(), reply.uav_mac.as_bytes().to_vec()]
        }
        (Protocol::Search, TagVariant::Honest) => {
            let t = honest_search(setup, pos, tag, now, rng)?;
            vec![t.sa.query_mac.as_bytes().to_vec(), t.sb.tag_mac.as_bytes().to_vec(), t.sb.tag_nonce.as_bytes().to_vec()]
        }
        (Protocol::Search, TagVariant::StaticResponse) => {
            let target = setup.grant.entries()[pos].temp_id;
            let (sa, _) = e.search_uav_start(&setup.uav, &target, now, &mut c)?;
            let k = derive_tag_key(mac, tag.tag_id(), &sa.window, &sa.rights);
            let tag_nonce = static_nonce(mac, tag);
            let tag_mac = mac.mac_parts(k.as_bytes(), &[&sa.timestamp.to_bytes(), tag_nonce.as_bytes()]);
            vec![sa.query_mac.as_bytes().to_vec(), tag_mac.to_vec(), tag_nonce.as_bytes().to_vec()]
        }
    };
    Ok(Observation { fields })
}

#[derive(Debug, Clone)]
pub struct TrackingParams {
    pub trials: u64,
    pub protocol: Protocol,
    /// Labelled sessions observed per tag before each challenge.
    pub observations: usize,
    pub variant: TagVariant,
    /// Grant positions of the two tags.
    pub pair: (usize, usize),
}

impl TrackingParams {
    pub fn new(trials: u64, protocol: Protocol) -> Self {
        Self {
            trials,
            protocol,
            observations: 4,
            variant: TagVariant::Honest,
            pair: (0, 1),
        }
    }
}

/// Game 3: after watching labelled sessions of two tags, the adversary
/// names the tag behind one fresh session. One result per distinguisher;
/// all of them judge the same challenges.
pub fn play_game3_tracking(
    setup: &GameSetup,
    params: &TrackingParams,
    seed: u64,
) -> Result<Vec<GameResult>, SimError> {
    let (p0, p1) = params.pair;
    let n = setup.granted.len();
    if p0 == p1 || p0 >= n || p1 >= n {
        return Err(ValidationError::single("adversary.tags", "tracking needs two distinct granted tags").into());
    }
    // Session times are drawn per trial: the search query is a function of
    // key and time alone, so fixed times would replay the same strings in
    // every trial and the trials would not be independent.
    let sessions = 2 * params.observations as u32 + 1;
    let window_len = setup.grant.window().end().0 - setup.grant.window().start().0;
    let Some(room) = window_len.checked_sub(2 + sessions * MAX_SESSION_GAP).filter(|r| *r >= 1) else {
        return Err(ValidationError::single("adversary.observations", "too many observations for the grant window").into());
    };
    let mut honest = RandomSource::seeded_stream(seed, 31);
    let mut challenger = RandomSource::seeded_stream(seed, 32);
    let mut adv = RandomSource::seeded_stream(seed, 33);
    let strategy_suffix = match params.variant {
        TagVariant::Honest => "",
        TagVariant::StaticResponse => "-static-control",
    };
    let mut results: Vec<GameResult> = Distinguisher::ALL
        .iter()
        .map(|d| GameResult::new(3, params.protocol, &format!("{}{strategy_suffix}", d.name()), params.trials))
        .collect();
    let positions = [p0, p1];
    for _ in 0..params.trials {
        let mut tags = positions.map(|p| setup.fresh_tag(p));
        let mut history: [Vec<Observation>; 2] = [Vec::new(), Vec::new()];
        let mut times = Vec::with_capacity(sessions as usize);
        let mut t = 1 + (challenger.next_u64()? % u64::from(room)) as u32;
        for _ in 0..sessions {
            t += 1 + (challenger.next_u64()? % u64::from(MAX_SESSION_GAP)) as u32;
            times.push(setup.at(t));
        }
        let mut times = times.into_iter();
        for _ in 0..params.observations {
            for k in 0..2 {
                let at = times.next().expect("one time per session");
                let obs = observe_session(setup, positions[k], &mut tags[k], at, params.protocol, params.variant, &mut honest)?;
                history[k].push(obs);
            }
        }
        let b = (challenger.next_u64()? & 1) as usize;
        let at = times.next().expect("one time per session");
        let challenge = observe_session(setup, positions[b], &mut tags[b], at, params.protocol, params.variant, &mut honest)?;
        for (d, r) in Distinguisher::ALL.iter().zip(results.iter_mut()) {
            if d.guess(&history, &challenge, &mut adv)? == b {
                r.adversary_wins += 1;
            }
        }
    }
    Ok(results)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DesyncOutcome {
    pub responded: bool,
    pub t_sys_before: Timestamp32,
    pub t_sys_after: Timestamp32,
}

impl DesyncOutcome {
    pub fn changed(&self) -> bool {
        self.t_sys_before != self.t_sys_after
    }
}

/// Sends a keyless `SearchA` stamped `forged_t` with a random MAC.
pub fn inject_desync_attempt(
    setup: &GameSetup,
    tag: &mut TagState,
    forged_t: Timestamp32,
    rng: &mut RandomSource,
) -> Result<DesyncOutcome, SimError> {
    let probe = SearchA {
        window: *setup.grant.window(),
        rights: *setup.grant.rights(),
        query_mac: GameSetup::random_mac(rng)?,
        timestamp: forged_t,
    };
    let before = tag.t_sys();
    let reply = setup
        .engine
        .search_tag_respond(tag, &probe, rng, &mut OpCounters::default())?;
    Ok(DesyncOutcome {
        responded: reply.is_some(),
        t_sys_before: before,
        t_sys_after: tag.t_sys(),
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReplayDesyncReport {
    pub trials: u64,
    pub replay_acceptances: u64,
    pub forged_acceptances: u64,
    pub timestamp_changes: u64,
    pub honest_search_after: bool,
}

impl ReplayDesyncReport {
    pub fn passed(&self) -> bool {
        self.replay_acceptances == 0
            && self.forged_acceptances == 0
            && self.timestamp_changes == 0
            && self.honest_search_after
    }

    pub fn render(&self) -> String {
        format!(
            "desync.trials={}\ndesync.replay_acceptances={}\ndesync.forged_acceptances={}\ndesync.timestamp_changes={}\ndesync.honest_search_after={}\ndesync.verdict={}\n",
            self.trials,
            self.replay_acceptances,
            self.forged_acceptances,
            self.timestamp_changes,
            self.honest_search_after,
            if self.passed() { "PASS" } else { "FAIL" }
        )
    }
}

/// Replays a consumed query and sends forged-future probes at one tag
/// `trials` times each, then checks an honest search still succeeds.
pub fn play_replay_desync(setup: &GameSetup, trials: u64, seed: u64) -> Result<ReplayDesyncReport, SimError> {
    let mut honest = RandomSource::seeded_stream(seed, 41);
    let mut adv = RandomSource::seeded_stream(seed, 42);
    let mut tag = setup.fresh_tag(0);
    let consumed = honest_search(setup, 0, &mut tag, setup.at(2), &mut honest)?;
    let end = setup.grant.window().end();
    let mut report = ReplayDesyncReport {
        trials,
        replay_acceptances: 0,
        forged_acceptances: 0,
        timestamp_changes: 0,
        honest_search_after: false,
    };
    for trial in 0..trials {
        let before = tag.t_sys();
        let replayed = setup
            .engine
            .search_tag_respond(&mut tag, &consumed.sa, &mut adv, &mut OpCounters::default())?;
        report.replay_acceptances += u64::from(replayed.is_some());
        report.timestamp_changes += u64::from(tag.t_sys() != before);

        let span = end.0 - tag.t_sys().0;
        let forged_t = match trial % 3 {
            0 => Timestamp32(end.0 - 1),
            1 => Timestamp32(tag.t_sys().0 + 1 + (adv.next_u64()? % u64::from(span - 1)) as u32),
            _ => end.saturating_add(1 + (adv.next_u64()? % 1_000_000) as u32),
        };
        let outcome = inject_desync_attempt(setup, &mut tag, forged_t, &mut adv)?;
        report.forged_acceptances += u64::from(outcome.responded);
        report.timestamp_changes += u64::from(outcome.changed());
    }
    let after = honest_search(setup, 0, &mut tag, setup.at(3), &mut honest);
    report.honest_search_after = after.is_ok() && tag.t_sys() == setup.at(3);
    Ok(report)
}

#[derive(Debug, Clone)]
pub struct GameSuiteReport {
    pub results: Vec<GameResult>,
    pub desync: ReplayDesyncReport,
}

impl GameSuiteReport {
    pub fn passed(&self) -> bool {
        self.results.iter().all(GameResult::passed) && self.desync.passed()
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for r in &self.results {
            out.push_str(&r.render());
        }
        out.push_str(&self.desync.render());
        let _ = writeln!(out, "suite.verdict={}", if self.passed() { "PASS" } else { "FAIL" });
        out
    }
}

/// Games 1-3 for both protocols plus the desync probe.
pub fn run_game_suite(
    setup: &GameSetup,
    trials: u64,
    seed: u64,
    variant: TagVariant,
) -> Result<GameSuiteReport, SimError> {
    if trials == 0 {
        return Err(ValidationError::single("trials", "must be at least 1").into());
    }
    let mut results = Vec::new();
    for protocol in [Protocol::Auth, Protocol::Search] {
        results.push(play_game1_masquerade(setup, trials, protocol, seed)?);
        results.push(play_game2_counterfeit(setup, trials, protocol, seed)?);
        let params = TrackingParams {
            variant,
            ..TrackingParams::new(trials, protocol)
        };
        results.extend(play_game3_tracking(setup, &params, seed)?);
    }
    let desync = play_replay_desync(setup, trials, seed)?;
    Ok(GameSuiteReport { results, desync })
}
