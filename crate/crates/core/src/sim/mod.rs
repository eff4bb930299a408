//! Deterministic broadcast medium and scenario runner.
//!
//! A scenario is one logical event loop: the UAV broadcasts on a schedule,
//! every in-range tag hears each broadcast, replies are collected in
//! ascending tag index and the UAV answers them in that order. All
//! randomness comes from one seed, so a scenario always yields the same
//! transcript bytes.

pub mod adversary;
pub mod config;
pub mod games;

use std::fmt;
use std::fmt::Write as _;

use thiserror::Error;

use crate::actors::{ActorError, BackendServer, TagState, UavState};
use crate::crypto::{CryptoError, RandomSource};
use crate::protocol::{
    AuthTagSession, OpCounters, ProtocolEngine, ProtocolError, ScanOutcome,
};
use crate::wire::{AuthB, MessageKind, ProtocolMessage, SessionKey, TempId, Timestamp32};

pub use adversary::{AdversaryScript, Strategy};
pub use config::{Action, GrantSpec, ScenarioConfig, ScheduledAction, SeedSource, ValidationError};
pub use games::GameResult;

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Validation(#[from] ValidationError),
    #[error(transparent)]
    Actor(#[from] ActorError),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error(transparent)]
    Crypto(#[from] CryptoError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Protocol {
    Auth,
    Search,
}

impl Protocol {
    pub fn name(self) -> &'static str {
        match self {
            Protocol::Auth => "auth",
            Protocol::Search => "search",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "auth" => Some(Protocol::Auth),
            "search" => Some(Protocol::Search),
            _ => None,
        }
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ActorId {
    Uav(String),
    Tag(usize),
    Adversary,
    /// Every tag in range.
    Broadcast,
}

impl fmt::Display for ActorId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ActorId::Uav(id) => write!(f, "uav:{id}"),
            ActorId::Tag(i) => write!(f, "tag:{i}"),
            ActorId::Adversary => f.write_str("adversary"),
            ActorId::Broadcast => f.write_str("*"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventKind {
    Broadcast,
    Deliver,
    AdversaryInject,
    AdversaryDrop,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Broadcast,
    /// A tag replied (to an injected or replayed query).
    Answered,
    Authorized,
    Unauthorized,
    Verified,
    Rejected,
    Found,
    /// Receiver stayed silent.
    Ignored,
    Dropped,
    /// A copy of a physically compromised tag was accepted. Expected.
    Clone,
    /// An adversarial message was accepted. Always an alarm.
    Breach,
}

impl Verdict {
    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Broadcast => "broadcast",
            Verdict::Answered => "answered",
            Verdict::Authorized => "authorized",
            Verdict::Unauthorized => "unauthorized",
            Verdict::Verified => "verified",
            Verdict::Rejected => "rejected",
            Verdict::Found => "found",
            Verdict::Ignored => "ignored",
            Verdict::Dropped => "dropped",
            Verdict::Clone => "clone",
            Verdict::Breach => "BREACH",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChannelEvent {
    pub seq: u64,
    pub time: Timestamp32,
    pub kind: EventKind,
    pub message: ProtocolMessage,
    pub source: ActorId,
    pub target: ActorId,
    pub verdict: Verdict,
}

impl ChannelEvent {
    /// `seq time source->target direction hex verdict`
    pub fn render(&self) -> String {
        format!(
            "{} {} {}->{} {} {} {}",
            self.seq,
            self.time,
            self.source,
            self.target,
            self.message.kind().label(),
            hex::encode(self.message.encode()),
            self.verdict.as_str()
        )
    }
}

/// Append-only event log with strictly increasing sequence numbers and
/// non-decreasing time.
#[derive(Debug, Default, Clone)]
pub struct Channel {
    events: Vec<ChannelEvent>,
    now: Timestamp32,
}

impl Channel {
    pub fn now(&self) -> Timestamp32 {
        self.now
    }

    pub fn set_time(&mut self, t: Timestamp32) {
        assert!(t >= self.now, "simulated clock must not run backwards");
        self.now = t;
    }

    pub fn record(
        &mut self,
        kind: EventKind,
        message: ProtocolMessage,
        source: ActorId,
        target: ActorId,
        verdict: Verdict,
    ) -> u64 {
        let seq = self.events.len() as u64 + 1;
        self.events.push(ChannelEvent {
            seq,
            time: self.now,
            kind,
            message,
            source,
            target,
            verdict,
        });
        seq
    }

    pub fn events(&self) -> &[ChannelEvent] {
        &self.events
    }

    pub fn event(&self, seq: u64) -> Option<&ChannelEvent> {
        seq.checked_sub(1).and_then(|i| self.events.get(i as usize))
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for e in &self.events {
            out.push_str(&e.render());
            out.push('\n');
        }
        out
    }
}

/// One handshake between the UAV and one tag.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SessionRecord {
    pub protocol: Protocol,
    pub time: Timestamp32,
    pub tag_index: Option<usize>,
    pub uav: OpCounters,
    pub tag: OpCounters,
    pub uav_key: Option<SessionKey>,
    pub tag_key: Option<SessionKey>,
    /// Whether the adversary touched any message of this session.
    pub interfered: bool,
}

impl SessionRecord {
    pub fn completed(&self) -> bool {
        self.uav_key.is_some() && self.tag_key.is_some()
    }

    pub fn keys_agree(&self) -> bool {
        self.completed() && self.uav_key == self.tag_key
    }
}

#[derive(Debug, Clone)]
pub struct SimTag {
    pub label: String,
    pub state: TagState,
    pub(crate) pending_auth: Option<AuthTagSession>,
    /// Counters of the pending auth session.
    pub(crate) pending_counters: OpCounters,
}

/// Adversary interference with honest traffic, decided per message.
pub trait Interceptor {
    /// Return `true` to suppress the honest message.
    fn drop_message(&mut self, _kind: MessageKind) -> bool {
        false
    }

    /// Extra `AuthB` replies injected after the honest ones.
    fn inject_auth_replies(
        &mut self,
        _engine: &ProtocolEngine,
        _msg: &crate::wire::AuthA,
    ) -> Result<Vec<(AuthB, bool)>, SimError> {
        Ok(Vec::new())
    }
}

pub struct Passive;

impl Interceptor for Passive {}

/// Live state of a running scenario.
pub struct Simulation {
    pub(crate) engine: ProtocolEngine,
    pub(crate) uav: UavState,
    pub(crate) tags: Vec<SimTag>,
    pub(crate) channel: Channel,
    pub(crate) rng: RandomSource,
    pub(crate) sessions: Vec<SessionRecord>,
    pub(crate) alarms: Vec<String>,
    pub(crate) unauthorized_events: u64,
    pub(crate) counterfeit_accepted: u64,
    pub(crate) clones_accepted: u64,
    last_t_sys: Vec<Timestamp32>,
    searches: Vec<(TempId, Timestamp32)>,
}

impl Simulation {
    pub fn new(
        engine: ProtocolEngine,
        uav: UavState,
        tags: Vec<SimTag>,
        rng: RandomSource,
    ) -> Self {
        let last_t_sys = tags.iter().map(|t| t.state.t_sys()).collect();
        Self {
            engine,
            uav,
            tags,
            channel: Channel::default(),
            rng,
            sessions: Vec::new(),
            alarms: Vec::new(),
            unauthorized_events: 0,
            counterfeit_accepted: 0,
            clones_accepted: 0,
            last_t_sys,
            searches: Vec::new(),
        }
    }

    pub fn tags(&self) -> &[SimTag] {
        &self.tags
    }

    pub fn channel(&self) -> &Channel {
        &self.channel
    }

    pub fn sessions(&self) -> &[SessionRecord] {
        &self.sessions
    }

    pub fn alarms(&self) -> &[String] {
        &self.alarms
    }

    pub(crate) fn check_monotonic(&mut self, tag: usize) {
        let now = self.tags[tag].state.t_sys();
        if now < self.last_t_sys[tag] {
            self.alarms.push(format!(
                "tag {tag}: T_SYS decreased from {} to {now}",
                self.last_t_sys[tag]
            ));
        }
        self.last_t_sys[tag] = now;
    }

    fn uav_actor(&self) -> ActorId {
        ActorId::Uav(self.uav.uav_id().to_string())
    }

    /// One mass-authentication round at time `at`.
    pub fn auth_round(
        &mut self,
        at: Timestamp32,
        in_range: &[usize],
        adversary: &mut dyn Interceptor,
    ) -> Result<(), SimError> {
        self.channel.set_time(at);
        let mut uav_round = OpCounters::default();
        let (a, mut uav_session) = self.engine.auth_uav_start(&self.uav, &mut self.rng, &mut uav_round)?;
        let a_bits = MessageKind::AuthA.encoded_bits() as u64;
        let uav = self.uav_actor();
        self.channel.record(EventKind::Broadcast, a.into(), uav.clone(), ActorId::Broadcast, Verdict::Broadcast);

        // Every tag in range hears A; responders are queued in index order.
        let mut replies = Vec::new();
        for &i in in_range {
            let mut counters = OpCounters {
                bits_received: a_bits,
                ..OpCounters::default()
            };
            let tag = &mut self.tags[i];
            if let Some((b, session)) = self.engine.auth_tag_respond(&mut tag.state, &a, &mut self.rng, &mut counters)? {
                // A newer A supersedes any earlier pending session.
                tag.pending_auth = Some(session);
                counters.bits_sent += MessageKind::AuthB.encoded_bits() as u64;
                tag.pending_counters = counters;
                replies.push((i, b));
            }
            self.check_monotonic(i);
        }

        for (i, b) in replies {
            let dropped_b = adversary.drop_message(MessageKind::AuthB);
            let mut uav_c = OpCounters {
                prng_calls: uav_round.prng_calls,
                bits_sent: a_bits,
                ..OpCounters::default()
            };
            let mut record = SessionRecord {
                protocol: Protocol::Auth,
                time: at,
                tag_index: Some(i),
                uav: uav_c,
                tag: self.tags[i].pending_counters,
                uav_key: None,
                tag_key: None,
                interfered: dropped_b,
            };
            if dropped_b {
                self.channel.record(EventKind::AdversaryDrop, b.into(), ActorId::Tag(i), uav.clone(), Verdict::Dropped);
                self.sessions.push(record);
                continue;
            }
            uav_c.bits_received += MessageKind::AuthB.encoded_bits() as u64;
            let outcome = self.engine.auth_uav_process_b(&mut uav_session, &b, at, &mut uav_c)?;
            let ScanOutcome::Authorized { reply, matched } = outcome else {
                self.unauthorized_events += 1;
                self.channel.record(EventKind::Deliver, b.into(), ActorId::Tag(i), uav.clone(), Verdict::Unauthorized);
                record.uav = uav_c;
                self.sessions.push(record);
                continue;
            };
            self.channel.record(EventKind::Deliver, b.into(), ActorId::Tag(i), uav.clone(), Verdict::Authorized);
            record.uav_key = Some(matched.session_key);
            if adversary.drop_message(MessageKind::AuthC) {
                record.interfered = true;
                self.channel.record(EventKind::AdversaryDrop, reply.into(), uav.clone(), ActorId::Tag(i), Verdict::Dropped);
                uav_c.bits_sent += MessageKind::AuthC.encoded_bits() as u64;
                record.uav = uav_c;
                self.sessions.push(record);
                continue;
            }
            uav_c.bits_sent += MessageKind::AuthC.encoded_bits() as u64;
            let tag = &mut self.tags[i];
            let mut tag_c = tag.pending_counters;
            tag_c.bits_received += MessageKind::AuthC.encoded_bits() as u64;
            let key = match tag.pending_auth.as_mut() {
                Some(session) => self.engine.auth_tag_finish(session, &mut tag.state, &reply, &mut tag_c),
                None => None,
            };
            if key.is_some() {
                tag.pending_auth = None;
            }
            tag.pending_counters = tag_c;
            let verdict = if key.is_some() { Verdict::Verified } else { Verdict::Rejected };
            self.channel.record(EventKind::Deliver, reply.into(), uav.clone(), ActorId::Tag(i), verdict);
            self.check_monotonic(i);
            record.uav = uav_c;
            record.tag = tag_c;
            record.tag_key = key;
            self.sessions.push(record);
        }

        for (b, is_clone) in adversary.inject_auth_replies(&self.engine, &a)? {
            let mut scratch = OpCounters::default();
            let outcome = self.engine.auth_uav_process_b(&mut uav_session, &b, at, &mut scratch)?;
            let verdict = match (outcome, is_clone) {
                (ScanOutcome::Unauthorized, _) => {
                    self.unauthorized_events += 1;
                    Verdict::Unauthorized
                }
                (ScanOutcome::Authorized { .. }, true) => {
                    self.clones_accepted += 1;
                    Verdict::Clone
                }
                (ScanOutcome::Authorized { .. }, false) => {
                    self.counterfeit_accepted += 1;
                    self.alarms.push(format!("t={at}: UAV authenticated a counterfeit tag"));
                    Verdict::Breach
                }
            };
            self.channel.record(EventKind::AdversaryInject, b.into(), ActorId::Adversary, uav.clone(), verdict);
        }
        uav_session.close();
        Ok(())
    }

    /// One targeted search at time `at`.
    pub fn search(
        &mut self,
        at: Timestamp32,
        target: TempId,
        in_range: &[usize],
        adversary: &mut dyn Interceptor,
    ) -> Result<(), SimError> {
        if self.searches.contains(&(target, at)) {
            return Err(ValidationError::single(
                "schedule",
                format!("second search for {} within second {at}", target.to_hex()),
            )
            .into());
        }
        self.searches.push((target, at));
        self.channel.set_time(at);
        let uav = self.uav_actor();
        let mut uav_c = OpCounters::default();
        let (sa, pending) = self.engine.search_uav_start(&self.uav, &target, at, &mut uav_c)?;
        uav_c.bits_sent += MessageKind::SearchA.encoded_bits() as u64;
        let mut record = SessionRecord {
            protocol: Protocol::Search,
            time: at,
            tag_index: None,
            uav: uav_c,
            tag: OpCounters::default(),
            uav_key: None,
            tag_key: None,
            interfered: false,
        };
        if adversary.drop_message(MessageKind::SearchA) {
            record.interfered = true;
            self.channel.record(EventKind::AdversaryDrop, sa.into(), uav, ActorId::Broadcast, Verdict::Dropped);
            self.sessions.push(record);
            return Ok(());
        }
        self.channel.record(EventKind::Broadcast, sa.into(), uav.clone(), ActorId::Broadcast, Verdict::Broadcast);

        let mut reply = None;
        for &i in in_range {
            let mut tag_c = OpCounters {
                bits_received: MessageKind::SearchA.encoded_bits() as u64,
                ..OpCounters::default()
            };
            let answer = self.engine.search_tag_respond(&mut self.tags[i].state, &sa, &mut self.rng, &mut tag_c)?;
            self.check_monotonic(i);
            if let Some(answer) = answer {
                tag_c.bits_sent += MessageKind::SearchB.encoded_bits() as u64;
                if reply.is_none() {
                    reply = Some((i, answer, tag_c));
                } else {
                    self.alarms.push(format!("t={at}: more than one tag answered a search"));
                }
            }
        }

        if let Some((i, answer, tag_c)) = reply {
            record.tag_index = Some(i);
            record.tag = tag_c;
            record.tag_key = Some(answer.session_key);
            if adversary.drop_message(MessageKind::SearchB) {
                record.interfered = true;
                self.channel.record(EventKind::AdversaryDrop, answer.reply.into(), ActorId::Tag(i), uav, Verdict::Dropped);
            } else {
                record.uav.bits_received += MessageKind::SearchB.encoded_bits() as u64;
                let key = self.engine.search_uav_finish(&pending, &answer.reply, &mut record.uav);
                let verdict = if key.is_some() { Verdict::Found } else { Verdict::Rejected };
                self.channel.record(EventKind::Deliver, answer.reply.into(), ActorId::Tag(i), uav, verdict);
                record.uav_key = key;
            }
        }
        self.sessions.push(record);
        Ok(())
    }

    /// Post-run invariant checks over all recorded sessions.
    fn check_sessions(&mut self) {
        for s in &self.sessions {
            if let (Some(u), Some(t)) = (&s.uav_key, &s.tag_key) {
                if u != t {
                    self.alarms.push(format!(
                        "{} session at t={} with tag {:?}: session keys differ",
                        s.protocol, s.time, s.tag_index
                    ));
                }
            } else if !s.interfered && s.uav_key.is_some() != s.tag_key.is_some() {
                self.alarms.push(format!(
                    "{} session at t={} with tag {:?}: honest run did not complete on both sides",
                    s.protocol, s.time, s.tag_index
                ));
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct ScenarioOutcome {
    pub seed: u64,
    pub transcript: Channel,
    pub sessions: Vec<SessionRecord>,
    pub unauthorized_events: u64,
    pub alarms: Vec<String>,
    pub adversary: Option<adversary::AdversaryReport>,
    pub final_t_sys: Vec<Timestamp32>,
}

impl ScenarioOutcome {
    pub fn transcript_text(&self) -> String {
        self.transcript.render()
    }

    pub fn completed(&self, protocol: Protocol) -> impl Iterator<Item = &SessionRecord> {
        self.sessions
            .iter()
            .filter(move |s| s.protocol == protocol && s.completed())
    }

    pub fn key_agreements(&self) -> usize {
        self.sessions.iter().filter(|s| s.keys_agree()).count()
    }

    pub fn passed(&self) -> bool {
        self.alarms.is_empty()
    }

    /// Per-session counters as stable `key=value` lines.
    pub fn counters_text(&self) -> String {
        let mut out = String::new();
        for (n, s) in self.sessions.iter().enumerate() {
            let tag = s.tag_index.map_or("-".to_string(), |i| i.to_string());
            for (role, c) in [("uav", &s.uav), ("tag", &s.tag)] {
                let _ = writeln!(
                    out,
                    "session.{n}.{}.{role}.tag={tag} mac_calls={} session_key_macs={} prng_calls={} bits_sent={} bits_received={}",
                    s.protocol, c.mac_calls, c.session_key_macs, c.prng_calls, c.bits_sent, c.bits_received
                );
            }
        }
        out
    }
}

/// Runs a validated scenario to completion.
pub fn run_scenario(config: &ScenarioConfig) -> Result<ScenarioOutcome, SimError> {
    config.validate()?;
    let mut server = BackendServer::new(config.registry.clone(), config.mac);
    let g = &config.grant;
    let issued = server.issue_grant(&g.uav_id, &g.tags, g.rights, g.start, g.end, g.issued_at.unwrap_or(g.start))?;
    let uav = UavState::with_grant(issued);

    let mut tags = Vec::with_capacity(config.registry.len());
    for entry in config.registry.entries() {
        let mut state = TagState::from_entry(entry);
        if let Some(t) = config.provision_at {
            state.provision(t)?;
        }
        tags.push(SimTag {
            label: entry.label.clone(),
            state,
            pending_auth: None,
            pending_counters: OpCounters::default(),
        });
    }

    let mut sim = Simulation::new(
        ProtocolEngine::new(config.mac),
        uav,
        tags,
        RandomSource::seeded_stream(config.seed, 0),
    );
    let mut adversary = config
        .adversary
        .as_ref()
        .map(|script| adversary::AdversaryRuntime::new(script.clone(), config, &sim))
        .transpose()?;

    let everyone: Vec<usize> = (0..config.registry.len()).collect();
    for step in &config.schedule {
        let in_range = match &step.in_range {
            Some(labels) => labels
                .iter()
                .map(|l| config.registry.index_of_label(l).expect("validated label"))
                .collect(),
            None => everyone.clone(),
        };
        let before = sim.channel.events().len();
        match (&step.action, adversary.as_mut()) {
            (Action::AuthRound, Some(adv)) => sim.auth_round(step.at, &in_range, adv)?,
            (Action::AuthRound, None) => sim.auth_round(step.at, &in_range, &mut Passive)?,
            (Action::Search { target }, Some(adv)) => sim.search(step.at, *target, &in_range, adv)?,
            (Action::Search { target }, None) => sim.search(step.at, *target, &in_range, &mut Passive)?,
        }
        if let Some(adv) = adversary.as_mut() {
            adv.after_action(&mut sim, before, &in_range)?;
        }
    }
    sim.check_sessions();

    let adversary_report = match adversary {
        Some(adv) => Some(adv.finish(&mut sim, config)?),
        None => None,
    };
    Ok(ScenarioOutcome {
        seed: config.seed,
        final_t_sys: sim.tags.iter().map(|t| t.state.t_sys()).collect(),
        transcript: sim.channel,
        sessions: sim.sessions,
        unauthorized_events: sim.unauthorized_events,
        alarms: sim.alarms,
        adversary: adversary_report,
    })
}
