//! Step functions for the three-message mass authentication and the
//! two-message tag search.
//!
//! Each function consumes one incoming message and the caller's explicit
//! state, and returns the outgoing message if there is one. A tag never
//! reports why it stayed quiet: every tag-side failure is `None`.

use std::sync::Arc;

use thiserror::Error;

use crate::actors::{derive_tag_key, AccessGrant, TagState, UavState};
use crate::crypto::{mac_eq, CryptoError, MacAlgorithm, RandomSource};
use crate::wire::{
    AuthA, AuthB, AuthC, MacTag, Nonce128, SearchA, SearchB, SessionKey, TagKey, TempId,
    TimeWindow, Timestamp32,
};

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error("UAV {0:?} holds no grant")]
    NotAuthorized(String),
    #[error("temporary id {0} is not in the UAV's grant")]
    UnknownTarget(String),
    #[error("session is not awaiting this message")]
    WrongPhase,
    #[error(transparent)]
    Crypto(#[from] CryptoError),
}

/// Per-role, per-session operation tally.
///
/// `mac_calls` excludes session-key derivation, which is tracked in
/// `session_key_macs`. Bit counts are filled in by whoever carries the
/// messages.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct OpCounters {
    pub mac_calls: u64,
    pub session_key_macs: u64,
    pub prng_calls: u64,
    pub bits_sent: u64,
    pub bits_received: u64,
}

impl OpCounters {
    pub fn total_macs(&self) -> u64 {
        self.mac_calls + self.session_key_macs
    }

    pub fn absorb(&mut self, other: &OpCounters) {
        self.mac_calls += other.mac_calls;
        self.session_key_macs += other.session_key_macs;
        self.prng_calls += other.prng_calls;
        self.bits_sent += other.bits_sent;
        self.bits_received += other.bits_received;
    }
}

/// `K_S = MAC_K(t_j || r_i || window)`, shared by both handshakes.
pub fn derive_session_key(
    mac: MacAlgorithm,
    key: &TagKey,
    t_j: Timestamp32,
    tag_nonce: &Nonce128,
    window: &TimeWindow,
) -> SessionKey {
    SessionKey(mac.mac_parts(
        key.as_bytes(),
        &[&t_j.to_bytes(), tag_nonce.as_bytes(), &window.to_bytes()],
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UavPhase {
    SentA,
    Done,
    Failed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TagPhase {
    SentB,
    Done,
    Failed,
}

/// A tag the UAV found in its list during one broadcast round.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UavMatch {
    pub entry_index: usize,
    pub temp_id: TempId,
    pub key: TagKey,
    pub session_key: SessionKey,
    pub timestamp: Timestamp32,
    pub tag_nonce: Nonce128,
}

/// UAV side of one `AuthA` broadcast. A single round may authenticate many
/// tags, so matches accumulate until [`AuthUavSession::close`].
#[derive(Debug, Clone)]
pub struct AuthUavSession {
    uav_nonce: Nonce128,
    grant: Arc<AccessGrant>,
    phase: UavPhase,
    matches: Vec<UavMatch>,
    unauthorized: usize,
}

impl AuthUavSession {
    pub fn uav_nonce(&self) -> &Nonce128 {
        &self.uav_nonce
    }

    pub fn phase(&self) -> UavPhase {
        self.phase
    }

    pub fn matches(&self) -> &[UavMatch] {
        &self.matches
    }

    pub fn unauthorized_count(&self) -> usize {
        self.unauthorized
    }

    /// Ends the round: `Done` if any tag authenticated, else `Failed`.
    pub fn close(&mut self) -> UavPhase {
        if self.phase == UavPhase::SentA {
            self.phase = if self.matches.is_empty() {
                UavPhase::Failed
            } else {
                UavPhase::Done
            };
        }
        self.phase
    }
}

#[derive(Debug, Clone)]
pub enum ScanOutcome {
    Authorized { reply: AuthC, matched: UavMatch },
    /// No key in the list reproduces the tag's MAC.
    Unauthorized,
}

/// Tag side of a pending authentication.
#[derive(Debug, Clone)]
pub struct AuthTagSession {
    k_prime: TagKey,
    tag_nonce: Nonce128,
    window: TimeWindow,
    phase: TagPhase,
    session_key: Option<SessionKey>,
}

impl AuthTagSession {
    pub fn tag_nonce(&self) -> &Nonce128 {
        &self.tag_nonce
    }

    pub fn phase(&self) -> TagPhase {
        self.phase
    }

    pub fn session_key(&self) -> Option<&SessionKey> {
        self.session_key.as_ref()
    }
}

/// UAV side of an outstanding search query.
#[derive(Debug, Clone)]
pub struct PendingSearch {
    pub temp_id: TempId,
    key: TagKey,
    pub timestamp: Timestamp32,
    window: TimeWindow,
}

#[derive(Debug, Clone)]
pub struct SearchTagReply {
    pub reply: SearchB,
    pub session_key: SessionKey,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ProtocolEngine {
    mac: MacAlgorithm,
}

impl ProtocolEngine {
    pub fn new(mac: MacAlgorithm) -> Self {
        Self { mac }
    }

    pub fn mac_algorithm(&self) -> MacAlgorithm {
        self.mac
    }

    fn mac_tag(&self, key: &[u8], parts: &[&[u8]], counters: &mut OpCounters) -> MacTag {
        counters.mac_calls += 1;
        MacTag(self.mac.mac_parts(key, parts))
    }

    fn session_key(
        &self,
        key: &TagKey,
        t_j: Timestamp32,
        tag_nonce: &Nonce128,
        window: &TimeWindow,
        counters: &mut OpCounters,
    ) -> SessionKey {
        counters.session_key_macs += 1;
        derive_session_key(self.mac, key, t_j, tag_nonce, window)
    }

    fn tag_key(&self, tag: &TagState, window: &TimeWindow, rights: &crate::wire::AccessRights, counters: &mut OpCounters) -> TagKey {
        counters.mac_calls += 1;
        derive_tag_key(self.mac, tag.tag_id(), window, rights)
    }

    fn draw(&self, rng: &mut RandomSource, counters: &mut OpCounters) -> Result<Nonce128, CryptoError> {
        counters.prng_calls += 1;
        rng.nonce()
    }

    /// Opens a mass-authentication round.
    pub fn auth_uav_start(
        &self,
        uav: &UavState,
        rng: &mut RandomSource,
        counters: &mut OpCounters,
    ) -> Result<(AuthA, AuthUavSession), ProtocolError> {
        let grant = uav
            .grant()
            .ok_or_else(|| ProtocolError::NotAuthorized(uav.uav_id().to_string()))?
            .clone();
        let uav_nonce = self.draw(rng, counters)?;
        let msg = AuthA {
            window: *grant.window(),
            rights: *grant.rights(),
            uav_nonce,
        };
        Ok((
            msg,
            AuthUavSession {
                uav_nonce,
                grant,
                phase: UavPhase::SentA,
                matches: Vec::new(),
                unauthorized: 0,
            },
        ))
    }

    /// A tag's answer to `AuthA`. Silent unless `start < T_SYS < end`.
    pub fn auth_tag_respond(
        &self,
        tag: &mut TagState,
        msg: &AuthA,
        rng: &mut RandomSource,
        counters: &mut OpCounters,
    ) -> Result<Option<(AuthB, AuthTagSession)>, ProtocolError> {
        if !tag.check_auth_window(&msg.window) {
            return Ok(None);
        }
        let k_prime = self.tag_key(tag, &msg.window, &msg.rights, counters);
        let tag_nonce = self.draw(rng, counters)?;
        let tag_mac = self.mac_tag(
            k_prime.as_bytes(),
            &[tag_nonce.as_bytes(), msg.uav_nonce.as_bytes()],
            counters,
        );
        tag.derived_key_cache = Some(k_prime);
        Ok(Some((
            AuthB { tag_mac, tag_nonce },
            AuthTagSession {
                k_prime,
                tag_nonce,
                window: msg.window,
                phase: TagPhase::SentB,
                session_key: None,
            },
        )))
    }

    /// Scans the grant for a key that reproduces the tag's MAC. The first
    /// match is answered with `AuthC` stamped `now`.
    pub fn auth_uav_process_b(
        &self,
        session: &mut AuthUavSession,
        msg: &AuthB,
        now: Timestamp32,
        counters: &mut OpCounters,
    ) -> Result<ScanOutcome, ProtocolError> {
        if session.phase != UavPhase::SentA {
            return Err(ProtocolError::WrongPhase);
        }
        let grant = session.grant.clone();
        let hit = grant.entries().iter().enumerate().find(|(_, entry)| {
            let expected = self.mac_tag(
                entry.key.as_bytes(),
                &[msg.tag_nonce.as_bytes(), session.uav_nonce.as_bytes()],
                counters,
            );
            mac_eq(&expected, &msg.tag_mac)
        });
        let Some((entry_index, entry)) = hit else {
            session.unauthorized += 1;
            return Ok(ScanOutcome::Unauthorized);
        };
        let uav_mac = self.mac_tag(
            entry.key.as_bytes(),
            &[msg.tag_nonce.as_bytes(), &now.to_bytes()],
            counters,
        );
        let session_key = self.session_key(&entry.key, now, &msg.tag_nonce, grant.window(), counters);
        let matched = UavMatch {
            entry_index,
            temp_id: entry.temp_id,
            key: entry.key,
            session_key,
            timestamp: now,
            tag_nonce: msg.tag_nonce,
        };
        session.matches.push(matched.clone());
        Ok(ScanOutcome::Authorized {
            reply: AuthC {
                uav_mac,
                timestamp: now,
            },
            matched,
        })
    }

    /// Verifies the UAV's `AuthC`. On success the tag adopts the new
    /// timestamp and derives the session key; otherwise nothing changes and
    /// the session stays open.
    pub fn auth_tag_finish(
        &self,
        session: &mut AuthTagSession,
        tag: &mut TagState,
        msg: &AuthC,
        counters: &mut OpCounters,
    ) -> Option<SessionKey> {
        if session.phase != TagPhase::SentB {
            return None;
        }
        let expected = self.mac_tag(
            session.k_prime.as_bytes(),
            &[session.tag_nonce.as_bytes(), &msg.timestamp.to_bytes()],
            counters,
        );
        if !mac_eq(&expected, &msg.uav_mac) {
            return None;
        }
        // T_SYS only ever moves forward.
        if msg.timestamp > tag.t_sys() {
            tag.advance_to(msg.timestamp);
        }
        let key = self.session_key(
            &session.k_prime,
            msg.timestamp,
            &session.tag_nonce,
            &session.window,
            counters,
        );
        tag.derived_key_cache = None;
        session.phase = TagPhase::Done;
        session.session_key = Some(key);
        Some(key)
    }

    /// Builds a query that only the tag behind `target` can answer.
    pub fn search_uav_start(
        &self,
        uav: &UavState,
        target: &TempId,
        now: Timestamp32,
        counters: &mut OpCounters,
    ) -> Result<(SearchA, PendingSearch), ProtocolError> {
        let grant = uav
            .grant()
            .ok_or_else(|| ProtocolError::NotAuthorized(uav.uav_id().to_string()))?;
        let entry = grant
            .find(target)
            .ok_or_else(|| ProtocolError::UnknownTarget(target.to_hex()))?;
        let query_mac = self.mac_tag(entry.key.as_bytes(), &[&now.to_bytes()], counters);
        Ok((
            SearchA {
                window: *grant.window(),
                rights: *grant.rights(),
                query_mac,
                timestamp: now,
            },
            PendingSearch {
                temp_id: entry.temp_id,
                key: entry.key,
                timestamp: now,
                window: *grant.window(),
            },
        ))
    }

    /// A tag's handling of `SearchA`. Only the targeted tag answers, and it
    /// advances `T_SYS` to the query timestamp before replying.
    pub fn search_tag_respond(
        &self,
        tag: &mut TagState,
        msg: &SearchA,
        rng: &mut RandomSource,
        counters: &mut OpCounters,
    ) -> Result<Option<SearchTagReply>, ProtocolError> {
        if !tag.check_search_window(&msg.window, msg.timestamp) {
            return Ok(None);
        }
        let k_prime = self.tag_key(tag, &msg.window, &msg.rights, counters);
        let expected = self.mac_tag(k_prime.as_bytes(), &[&msg.timestamp.to_bytes()], counters);
        if !mac_eq(&expected, &msg.query_mac) {
            return Ok(None);
        }
        let tag_nonce = self.draw(rng, counters)?;
        tag.advance_to(msg.timestamp);
        let tag_mac = self.mac_tag(
            k_prime.as_bytes(),
            &[&msg.timestamp.to_bytes(), tag_nonce.as_bytes()],
            counters,
        );
        let session_key = self.session_key(&k_prime, msg.timestamp, &tag_nonce, &msg.window, counters);
        Ok(Some(SearchTagReply {
            reply: SearchB { tag_mac, tag_nonce },
            session_key,
        }))
    }

    /// Checks the tag's proof. `None` means the target was not found.
    pub fn search_uav_finish(
        &self,
        pending: &PendingSearch,
        msg: &SearchB,
        counters: &mut OpCounters,
    ) -> Option<SessionKey> {
        let expected = self.mac_tag(
            pending.key.as_bytes(),
            &[&pending.timestamp.to_bytes(), msg.tag_nonce.as_bytes()],
            counters,
        );
        if !mac_eq(&expected, &msg.tag_mac) {
            return None;
        }
        Some(self.session_key(
            &pending.key,
            pending.timestamp,
            &msg.tag_nonce,
            &pending.window,
            counters,
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::actors::{BackendServer, TagRegistry, TagSelection};
    use crate::wire::{AccessRights, TagId};

    const MAC: MacAlgorithm = MacAlgorithm::HmacSha1;

    fn ts(s: u32) -> Timestamp32 {
        Timestamp32(s)
    }

    struct Fixture {
        uav: UavState,
        tags: Vec<TagState>,
        rng: RandomSource,
        engine: ProtocolEngine,
    }

    /// Three registry tags, the first two granted, window [50, 150], all
    /// tags provisioned to T_SYS = 100.
    fn fixture() -> Fixture {
        let mut rng = RandomSource::seeded(3);
        let registry = TagRegistry::generate(3, &mut rng, ts(0)).unwrap();
        let mut server = BackendServer::new(registry.clone(), MAC);
        let issued = server
            .issue_grant("UAV-1", &TagSelection::Indices(vec![0, 1]), AccessRights::new(true, false, false), ts(50), ts(150), ts(60))
            .unwrap();
        let tags = registry
            .entries()
            .iter()
            .map(|e| {
                let mut t = TagState::from_entry(e);
                t.provision(ts(100)).unwrap();
                t
            })
            .collect();
        Fixture {
            uav: UavState::with_grant(issued),
            tags,
            rng,
            engine: ProtocolEngine::new(MAC),
        }
    }

    #[test]
    fn session_key_for_zero_inputs() {
        let w = TimeWindow::new(ts(0), ts(1)).unwrap();
        let k = derive_session_key(MAC, &TagKey([0; 20]), ts(0), &Nonce128([0; 16]), &w);
        assert_eq!(k.to_hex(), "902220517fc7ac53ad491b5945f070f99ac3126f");
        let w2 = TimeWindow::new(ts(0), ts(2)).unwrap();
        let k2 = derive_session_key(MAC, &TagKey([0; 20]), ts(0), &Nonce128([0; 16]), &w2);
        assert_eq!(k2.to_hex(), "3d4b653891556079f08729c9f50eb0c01e4510e2");
    }

    #[test]
    fn start_requires_grant() {
        let mut f = fixture();
        let bare = UavState::new("UAV-9");
        let err = f.engine.auth_uav_start(&bare, &mut f.rng, &mut OpCounters::default());
        assert!(matches!(err, Err(ProtocolError::NotAuthorized(_))));
        let err = f.engine.search_uav_start(&bare, &TempId([0; 16]), ts(120), &mut OpCounters::default());
        assert!(matches!(err, Err(ProtocolError::NotAuthorized(_))));
    }

    #[test]
    fn auth_start_carries_window_and_fresh_nonce() {
        let mut f = fixture();
        let mut c = OpCounters::default();
        let (a1, _) = f.engine.auth_uav_start(&f.uav, &mut f.rng, &mut c).unwrap();
        let (a2, _) = f.engine.auth_uav_start(&f.uav, &mut f.rng, &mut c).unwrap();
        assert_eq!(a1.window.to_bytes(), [0, 0, 0, 50, 0, 0, 0, 150]);
        assert_ne!(a1.uav_nonce, a2.uav_nonce);
        assert_eq!((c.prng_calls, c.mac_calls), (2, 0));
    }

    #[test]
    fn full_auth_agrees_on_session_key() {
        let mut f = fixture();
        let mut uav_c = OpCounters::default();
        let (a, mut uav_session) = f.engine.auth_uav_start(&f.uav, &mut f.rng, &mut uav_c).unwrap();
        let mut tag_c = OpCounters::default();
        let tag = &mut f.tags[1];
        let (b, mut tag_session) = f.engine.auth_tag_respond(tag, &a, &mut f.rng, &mut tag_c).unwrap().unwrap();
        assert_eq!(tag.t_sys(), ts(100), "T_SYS unchanged before C");
        let ScanOutcome::Authorized { reply, matched } =
            f.engine.auth_uav_process_b(&mut uav_session, &b, ts(120), &mut uav_c).unwrap()
        else {
            panic!("granted tag not recognised");
        };
        assert_eq!(matched.entry_index, 1);
        let key = f.engine.auth_tag_finish(&mut tag_session, tag, &reply, &mut tag_c).unwrap();
        assert_eq!(key, matched.session_key);
        assert_eq!(tag.t_sys(), ts(120));
        assert_eq!(tag_session.phase(), TagPhase::Done);
        assert_eq!((tag_c.mac_calls, tag_c.session_key_macs, tag_c.prng_calls), (3, 1, 1));
        // entry 1 needs two scan MACs, then V_ij, then K_S
        assert_eq!((uav_c.mac_calls, uav_c.session_key_macs), (3, 1));
        assert_eq!(uav_session.close(), UavPhase::Done);
    }

    #[test]
    fn ungranted_tag_is_unauthorized() {
        let mut f = fixture();
        let mut c = OpCounters::default();
        let (a, mut s) = f.engine.auth_uav_start(&f.uav, &mut f.rng, &mut c).unwrap();
        let (b, _) = f.engine.auth_tag_respond(&mut f.tags[2], &a, &mut f.rng, &mut c).unwrap().unwrap();
        assert!(matches!(
            f.engine.auth_uav_process_b(&mut s, &b, ts(120), &mut c).unwrap(),
            ScanOutcome::Unauthorized
        ));
        assert_eq!(s.unauthorized_count(), 1);
        assert_eq!(s.close(), UavPhase::Failed);
        assert!(matches!(
            f.engine.auth_uav_process_b(&mut s, &b, ts(120), &mut c),
            Err(ProtocolError::WrongPhase)
        ));
    }

    #[test]
    fn flipped_bit_in_b_is_unauthorized() {
        let mut f = fixture();
        let mut c = OpCounters::default();
        let (a, mut s) = f.engine.auth_uav_start(&f.uav, &mut f.rng, &mut c).unwrap();
        let (mut b, _) = f.engine.auth_tag_respond(&mut f.tags[0], &a, &mut f.rng, &mut c).unwrap().unwrap();
        b.tag_mac.0[7] ^= 0x10;
        assert!(matches!(
            f.engine.auth_uav_process_b(&mut s, &b, ts(120), &mut c).unwrap(),
            ScanOutcome::Unauthorized
        ));
    }

    #[test]
    fn tag_outside_window_is_silent() {
        let mut f = fixture();
        let mut c = OpCounters::default();
        let (a, _) = f.engine.auth_uav_start(&f.uav, &mut f.rng, &mut c).unwrap();
        let mut fresh = TagState::new(TagId([1; 16]), ts(10));
        let before = fresh.clone();
        let mut tag_c = OpCounters::default();
        assert!(f.engine.auth_tag_respond(&mut fresh, &a, &mut f.rng, &mut tag_c).unwrap().is_none());
        assert_eq!(fresh, before);
        assert_eq!(tag_c, OpCounters::default());
    }

    #[test]
    fn auth_c_from_other_session_is_rejected() {
        let mut f = fixture();
        let mut c = OpCounters::default();
        let (a, mut s) = f.engine.auth_uav_start(&f.uav, &mut f.rng, &mut c).unwrap();
        let tag = &mut f.tags[0];
        let (b, mut old) = f.engine.auth_tag_respond(tag, &a, &mut f.rng, &mut c).unwrap().unwrap();
        let ScanOutcome::Authorized { reply, .. } = f.engine.auth_uav_process_b(&mut s, &b, ts(110), &mut c).unwrap() else {
            panic!()
        };
        f.engine.auth_tag_finish(&mut old, tag, &reply, &mut c).unwrap();
        // A new session with a fresh r_i must not accept the recorded C.
        let (_, mut fresh) = f.engine.auth_tag_respond(tag, &a, &mut f.rng, &mut c).unwrap().unwrap();
        let t_before = tag.t_sys();
        assert!(f.engine.auth_tag_finish(&mut fresh, tag, &reply, &mut c).is_none());
        assert_eq!(tag.t_sys(), t_before);
        assert_eq!(fresh.phase(), TagPhase::SentB);
        // Finished sessions ignore further C messages.
        assert!(f.engine.auth_tag_finish(&mut old, tag, &reply, &mut c).is_none());
    }

    #[test]
    fn search_round_trip_and_replay() {
        let mut f = fixture();
        let target = f.uav.grant().unwrap().entries()[0].temp_id;
        let mut uav_c = OpCounters::default();
        let (sa, pending) = f.engine.search_uav_start(&f.uav, &target, ts(120), &mut uav_c).unwrap();
        assert_eq!(uav_c.mac_calls, 1);

        // Non-targeted tags stay quiet and keep their timestamp.
        let mut other_c = OpCounters::default();
        assert!(f.engine.search_tag_respond(&mut f.tags[1], &sa, &mut f.rng, &mut other_c).unwrap().is_none());
        assert_eq!(f.tags[1].t_sys(), ts(100));
        assert_eq!((other_c.mac_calls, other_c.prng_calls), (2, 0));

        let mut tag_c = OpCounters::default();
        let reply = f.engine.search_tag_respond(&mut f.tags[0], &sa, &mut f.rng, &mut tag_c).unwrap().unwrap();
        assert_eq!(f.tags[0].t_sys(), ts(120));
        assert_eq!((tag_c.mac_calls, tag_c.session_key_macs, tag_c.prng_calls), (3, 1, 1));
        let key = f.engine.search_uav_finish(&pending, &reply.reply, &mut uav_c).unwrap();
        assert_eq!(key, reply.session_key);

        // Exact replay: t_j is no longer ahead of T_SYS.
        assert!(f.engine.search_tag_respond(&mut f.tags[0], &sa, &mut f.rng, &mut tag_c).unwrap().is_none());
    }

    #[test]
    fn search_queries_differ_by_time_and_reject_unknown_target() {
        let f = fixture();
        let target = f.uav.grant().unwrap().entries()[0].temp_id;
        let mut c = OpCounters::default();
        let (q1, _) = f.engine.search_uav_start(&f.uav, &target, ts(120), &mut c).unwrap();
        let (q2, _) = f.engine.search_uav_start(&f.uav, &target, ts(121), &mut c).unwrap();
        assert_ne!(q1.query_mac, q2.query_mac);
        assert!(matches!(
            f.engine.search_uav_start(&f.uav, &TempId([0xee; 16]), ts(120), &mut c),
            Err(ProtocolError::UnknownTarget(_))
        ));
    }

    #[test]
    fn forged_search_b_rejected() {
        let mut f = fixture();
        let target = f.uav.grant().unwrap().entries()[0].temp_id;
        let mut c = OpCounters::default();
        let (_, pending) = f.engine.search_uav_start(&f.uav, &target, ts(120), &mut c).unwrap();
        for _ in 0..1_000 {
            let mut mac = [0u8; 20];
            f.rng.fill(&mut mac).unwrap();
            let forged = SearchB {
                tag_mac: MacTag(mac),
                tag_nonce: f.rng.nonce().unwrap(),
            };
            assert!(f.engine.search_uav_finish(&pending, &forged, &mut c).is_none());
        }
    }
}
