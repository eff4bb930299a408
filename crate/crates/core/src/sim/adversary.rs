//! Scripted adversaries for scenario runs.
//!
//! The adversary reads everything on the medium and may inject or drop up
//! to `budget` messages. It holds no keys; the counterfeit strategy gets the
//! memory of one compromised tag, nothing more.

use std::fmt::Write as _;

use crate::actors::TagState;
use crate::crypto::RandomSource;
use crate::protocol::{OpCounters, ProtocolEngine};
use crate::sim::games::{play_game3_tracking, GameResult, GameSetup, TagVariant, TrackingParams};
use crate::sim::{
    ActorId, EventKind, Interceptor, Protocol, ScenarioConfig, SimError, Simulation, ValidationError, Verdict,
};
use crate::wire::{AuthA, AuthB, AuthC, MacTag, MessageKind, ProtocolMessage, SearchA, TagId, Timestamp32};

pub const DEFAULT_BUDGET: u64 = 16;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Strategy {
    /// Read-only.
    Eavesdrop,
    /// Re-send one recorded event, or every honest A, C and SA just seen.
    Replay { event: Option<u64> },
    /// Fresh A with its own nonce, then random-MAC C and SA.
    MasqueradeUav,
    /// Answers every auth round with fabricated tags built from the memory
    /// of the tag labelled `compromised`.
    CounterfeitTag { compromised: String },
    /// Runs the tracking game on two registry tags at the end of the run.
    TrackingGame {
        tags: [String; 2],
        trials: u64,
        observations: usize,
        protocol: Protocol,
    },
}

impl Strategy {
    pub fn name(&self) -> &'static str {
        match self {
            Strategy::Eavesdrop => "eavesdrop",
            Strategy::Replay { .. } => "replay",
            Strategy::MasqueradeUav => "masquerade-uav",
            Strategy::CounterfeitTag { .. } => "counterfeit-tag",
            Strategy::TrackingGame { .. } => "tracking-game",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AdversaryScript {
    pub strategy: Strategy,
    /// Messages the adversary may inject or drop, in total.
    pub budget: u64,
    /// Honest message kinds to suppress while budget lasts.
    pub drop: Vec<MessageKind>,
}

impl AdversaryScript {
    pub fn new(strategy: Strategy) -> Self {
        Self {
            strategy,
            budget: DEFAULT_BUDGET,
            drop: Vec::new(),
        }
    }

    pub fn validate(&self, config: &ScenarioConfig, report: &mut dyn FnMut(String, String)) {
        let granted = config.granted_indices();
        let granted_label = |field: &str, label: &str, report: &mut dyn FnMut(String, String)| {
            match config.registry.index_of_label(label) {
                None => report(field.into(), format!("unknown tag label {label:?}")),
                Some(i) if !granted.contains(&i) => report(field.into(), format!("tag {label:?} is not in the grant")),
                Some(_) => {}
            }
        };
        match &self.strategy {
            Strategy::Replay { event: Some(0) } => {
                report("adversary.event".into(), "event numbers start at 1".into());
            }
            Strategy::CounterfeitTag { compromised } => {
                granted_label("adversary.compromised", compromised, report);
            }
            Strategy::TrackingGame { tags, trials, .. } => {
                if tags[0] == tags[1] {
                    report("adversary.tags".into(), "the two tags must differ".into());
                }
                for t in tags {
                    granted_label("adversary.tags", t, report);
                }
                if *trials == 0 {
                    report("adversary.trials".into(), "must be at least 1".into());
                }
            }
            _ => {}
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdversaryReport {
    pub strategy: String,
    pub injected: u64,
    pub dropped: u64,
    /// Events on the medium the adversary read.
    pub observed_events: u64,
    /// Adversarial messages some honest party accepted.
    pub breaches: u64,
    pub results: Vec<GameResult>,
}

impl AdversaryReport {
    pub fn render(&self) -> String {
        let mut out = format!(
            "adversary.strategy={}\nadversary.injected={}\nadversary.dropped={}\nadversary.observed_events={}\nadversary.breaches={}\n",
            self.strategy, self.injected, self.dropped, self.observed_events, self.breaches
        );
        for r in &self.results {
            let _ = write!(out, "{}", r.render());
        }
        out
    }
}

/// A script bound to one running scenario.
pub struct AdversaryRuntime {
    script: AdversaryScript,
    rng: RandomSource,
    remaining: u64,
    injected: u64,
    dropped: u64,
    breaches: u64,
    compromised: Option<(TagId, Timestamp32)>,
    fabrications: u64,
    registry_ids: Vec<TagId>,
    replayed_fixed_event: bool,
}

impl AdversaryRuntime {
    pub fn new(script: AdversaryScript, config: &ScenarioConfig, sim: &Simulation) -> Result<Self, SimError> {
        let compromised = match &script.strategy {
            Strategy::CounterfeitTag { compromised } => {
                let i = config
                    .registry
                    .index_of_label(compromised)
                    .ok_or_else(|| ValidationError::single("adversary.compromised", "unknown tag label"))?;
                Some(sim.tags[i].state.extract_secrets())
            }
            _ => None,
        };
        Ok(Self {
            remaining: script.budget,
            script,
            rng: RandomSource::seeded_stream(config.seed, 1),
            injected: 0,
            dropped: 0,
            breaches: 0,
            compromised,
            fabrications: 0,
            registry_ids: config.registry.entries().iter().map(|e| e.tag_id).collect(),
            replayed_fixed_event: false,
        })
    }

    fn spend(&mut self) -> bool {
        if self.remaining == 0 {
            return false;
        }
        self.remaining -= 1;
        true
    }

    fn random_mac(&mut self) -> Result<MacTag, SimError> {
        let mut m = [0u8; 20];
        self.rng.fill(&mut m)?;
        Ok(MacTag::from_bytes(m))
    }

    /// Alternates uniformly random ids and one-bit flips of `base`,
    /// skipping anything in the registry.
    fn fabricate_id(&mut self, base: &TagId) -> Result<TagId, SimError> {
        loop {
            let mut bytes = *base.as_bytes();
            if self.fabrications.is_multiple_of(2) {
                self.rng.fill(&mut bytes)?;
            } else {
                let bit = (self.rng.next_u64()? % 128) as usize;
                bytes[bit / 8] ^= 1 << (bit % 8);
            }
            self.fabrications += 1;
            let id = TagId::from_bytes(bytes);
            if !self.registry_ids.contains(&id) {
                return Ok(id);
            }
        }
    }

    /// Runs after each scheduled action. `before` is the event count when
    /// the action started.
    pub fn after_action(&mut self, sim: &mut Simulation, before: usize, in_range: &[usize]) -> Result<(), SimError> {
        match self.script.strategy.clone() {
            Strategy::Replay { event } => {
                let messages: Vec<(ProtocolMessage, ActorId)> = match event {
                    Some(seq) => {
                        if self.replayed_fixed_event || seq as usize > sim.channel.events().len() {
                            return Ok(());
                        }
                        self.replayed_fixed_event = true;
                        sim.channel
                            .event(seq)
                            .map(|e| vec![(e.message, e.target.clone())])
                            .unwrap_or_default()
                    }
                    None => sim.channel.events()[before..]
                        .iter()
                        .filter(|e| matches!(e.kind, EventKind::Broadcast | EventKind::Deliver))
                        .filter(|e| !matches!(e.message, ProtocolMessage::AuthB(_) | ProtocolMessage::SearchB(_)))
                        .map(|e| (e.message, e.target.clone()))
                        .collect(),
                };
                for (msg, target) in messages {
                    if !self.spend() {
                        break;
                    }
                    self.inject(sim, msg, &target, in_range)?;
                }
            }
            Strategy::MasqueradeUav => {
                let Some(grant) = sim.uav.grant().cloned() else {
                    return Ok(());
                };
                let t_j = sim.channel.now().saturating_add(1);
                if self.spend() {
                    let a = AuthA {
                        window: *grant.window(),
                        rights: *grant.rights(),
                        uav_nonce: self.rng.nonce()?,
                    };
                    let answered = self.inject(sim, a.into(), &ActorId::Broadcast, in_range)?;
                    for i in answered {
                        if !self.spend() {
                            break;
                        }
                        let c = AuthC {
                            uav_mac: self.random_mac()?,
                            timestamp: t_j,
                        };
                        self.inject(sim, c.into(), &ActorId::Tag(i), in_range)?;
                    }
                }
                if self.spend() {
                    let sa = SearchA {
                        window: *grant.window(),
                        rights: *grant.rights(),
                        query_mac: self.random_mac()?,
                        timestamp: t_j,
                    };
                    self.inject(sim, sa.into(), &ActorId::Broadcast, in_range)?;
                }
            }
            Strategy::Eavesdrop | Strategy::CounterfeitTag { .. } | Strategy::TrackingGame { .. } => {}
        }
        Ok(())
    }

    /// Delivers one adversarial message. Returns the tags that answered an
    /// injected `AuthA`.
    fn inject(
        &mut self,
        sim: &mut Simulation,
        msg: ProtocolMessage,
        target: &ActorId,
        in_range: &[usize],
    ) -> Result<Vec<usize>, SimError> {
        self.injected += 1;
        let mut answered = Vec::new();
        let mut scratch = OpCounters::default();
        let verdict = match &msg {
            ProtocolMessage::AuthA(a) => {
                for &i in in_range {
                    let tag = &mut sim.tags[i];
                    if let Some((_, session)) = sim.engine.auth_tag_respond(&mut tag.state, a, &mut self.rng, &mut scratch)? {
                        tag.pending_auth = Some(session);
                        answered.push(i);
                    }
                }
                if answered.is_empty() {
                    Verdict::Ignored
                } else {
                    Verdict::Answered
                }
            }
            ProtocolMessage::AuthC(c) => match target {
                ActorId::Tag(i) => {
                    let tag = &mut sim.tags[*i];
                    let before = tag.state.t_sys();
                    let key = match tag.pending_auth.as_mut() {
                        Some(session) => sim.engine.auth_tag_finish(session, &mut tag.state, c, &mut scratch),
                        None => None,
                    };
                    let moved = tag.state.t_sys() != before;
                    sim.check_monotonic(*i);
                    if key.is_some() || moved {
                        self.breach(sim, format!("tag {i} accepted an adversarial C"))
                    } else {
                        Verdict::Rejected
                    }
                }
                _ => Verdict::Ignored,
            },
            ProtocolMessage::SearchA(sa) => {
                let mut accepted = Vec::new();
                for &i in in_range {
                    let before = sim.tags[i].state.t_sys();
                    let reply = sim.engine.search_tag_respond(&mut sim.tags[i].state, sa, &mut self.rng, &mut scratch)?;
                    sim.check_monotonic(i);
                    if reply.is_some() || sim.tags[i].state.t_sys() != before {
                        accepted.push(i);
                    }
                }
                if accepted.is_empty() {
                    Verdict::Ignored
                } else {
                    self.breach(sim, format!("tags {accepted:?} answered an adversarial SA"))
                }
            }
            // The UAV keeps no open session between actions.
            ProtocolMessage::AuthB(_) | ProtocolMessage::SearchB(_) => Verdict::Ignored,
        };
        sim.channel.record(EventKind::AdversaryInject, msg, ActorId::Adversary, target.clone(), verdict);
        Ok(answered)
    }

    fn breach(&mut self, sim: &mut Simulation, what: String) -> Verdict {
        self.breaches += 1;
        sim.alarms.push(format!("t={}: {what}", sim.channel.now()));
        Verdict::Breach
    }

    /// Ends the run; the tracking game executes here.
    pub fn finish(self, sim: &mut Simulation, config: &ScenarioConfig) -> Result<AdversaryReport, SimError> {
        let mut results = Vec::new();
        if let Strategy::TrackingGame { tags, trials, observations, protocol } = &self.script.strategy {
            let grant = sim
                .uav
                .grant()
                .ok_or_else(|| ValidationError::single("grant", "UAV holds no grant"))?;
            let setup = GameSetup::new(config.registry.clone(), (**grant).clone(), config.mac)?;
            let pos = |label: &str| {
                setup
                    .grant_position(label)
                    .ok_or_else(|| ValidationError::single("adversary.tags", format!("tag {label:?} is not in the grant")))
            };
            let params = TrackingParams {
                observations: *observations,
                variant: TagVariant::Honest,
                pair: (pos(&tags[0])?, pos(&tags[1])?),
                ..TrackingParams::new(*trials, *protocol)
            };
            results = play_game3_tracking(&setup, &params, config.seed)?;
        }
        Ok(AdversaryReport {
            strategy: self.script.strategy.name().to_string(),
            injected: self.injected,
            dropped: self.dropped,
            observed_events: sim.channel.events().len() as u64,
            breaches: self.breaches + sim.counterfeit_accepted,
            results,
        })
    }
}

impl Interceptor for AdversaryRuntime {
    fn drop_message(&mut self, kind: MessageKind) -> bool {
        if self.script.drop.contains(&kind) && self.spend() {
            self.dropped += 1;
            return true;
        }
        false
    }

    /// Counterfeit strategy: one fabricated tag per round, plus a clone of
    /// the compromised tag.
    fn inject_auth_replies(&mut self, engine: &ProtocolEngine, msg: &AuthA) -> Result<Vec<(AuthB, bool)>, SimError> {
        let Some((id, t_sys)) = self.compromised else {
            return Ok(Vec::new());
        };
        let mut out = Vec::new();
        let mut scratch = OpCounters::default();
        let fake = self.fabricate_id(&id)?;
        for (tag_id, is_clone) in [(fake, false), (id, true)] {
            if !self.spend() {
                break;
            }
            self.injected += 1;
            let mut tag = TagState::new(tag_id, t_sys);
            if let Some((b, _)) = engine.auth_tag_respond(&mut tag, msg, &mut self.rng, &mut scratch)? {
                out.push((b, is_clone));
            }
        }
        Ok(out)
    }
}
