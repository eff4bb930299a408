//! The crate's MAC, derivations and handshake messages against a
//! from-scratch SHA-1/HMAC.

mod common;

use proptest::prelude::*;
use uavtag::actors::{derive_tag_key, derive_temp_id, BackendServer, TagRegistry, TagSelection, TagState, UavState};
use uavtag::crypto::{MacAlgorithm, RandomSource};
use uavtag::protocol::{derive_session_key, OpCounters, ProtocolEngine, ScanOutcome};
use uavtag::wire::{AccessRights, Nonce128, TagId, TagKey, TimeWindow, Timestamp32};

const MAC: MacAlgorithm = MacAlgorithm::HmacSha1;

#[test]
fn oracle_reproduces_published_vectors() {
    assert_eq!(common::hex(&common::sha1(b"abc")), "a9993e364706816aba3e25717850c26c9cd0d89d");
    assert_eq!(common::hex(&common::sha1(b"")), "da39a3ee5e6b4b0d3255bfef95601890afd80709");
    let long = b"abcdbcdecdefdefgefghfghighijhijkijkljklmklmnlmnomnopnopq";
    assert_eq!(common::hex(&common::sha1(long)), "84983e441c3bd26ebaae4aa1f95129e5e54670f1");
    assert_eq!(
        common::hex(&common::hmac_sha1(&[0x0b; 20], b"Hi There")),
        "b617318655057264e28bc0b6fb378c8ef146be00"
    );
    assert_eq!(
        common::hex(&common::hmac_sha1(b"Jefe", b"what do ya want for nothing?")),
        "effcdf6ae5eb2fa2d27416d5f184df9c259a7c79"
    );
}

proptest! {
    #[test]
    fn mac_matches_oracle(key in prop::collection::vec(any::<u8>(), 16..=20), msg in prop::collection::vec(any::<u8>(), 1..200)) {
        prop_assume!(key.len() == 16 || key.len() == 20);
        prop_assert_eq!(MAC.mac(&key, &msg).unwrap(), common::hmac_sha1(&key, &msg));
    }

    #[test]
    fn derivations_match_oracle(id in any::<[u8; 16]>(), t0 in 0u32..u32::MAX - 1, len in 1u32..100_000, bits in 0u8..8, t_j in any::<u32>(), r_i in any::<[u8; 16]>()) {
        let tz = t0.saturating_add(len).max(t0 + 1);
        let window = TimeWindow::new(Timestamp32(t0), Timestamp32(tz)).unwrap();
        let rights = AccessRights::new(bits & 4 != 0, bits & 2 != 0, bits & 1 != 0);
        let tag = TagId::from_bytes(id);
        let key = derive_tag_key(MAC, &tag, &window, &rights);
        let oracle_key = common::tag_key(&id, t0, tz, &rights.to_bytes());
        prop_assert_eq!(key.as_bytes(), &oracle_key);
        let temp = derive_temp_id(MAC, &tag, Timestamp32(t0));
        prop_assert_eq!(temp.as_bytes(), &common::temp_id(&id, t0));
        let ks = derive_session_key(MAC, &TagKey::from_bytes(oracle_key), Timestamp32(t_j), &Nonce128::from_bytes(r_i), &window);
        prop_assert_eq!(ks.as_bytes(), &common::session_key(&oracle_key, t_j, &r_i, t0, tz));
    }
}

fn fixture(seed: u64) -> (TagRegistry, UavState, TimeWindow, AccessRights) {
    let registry = TagRegistry::generate(3, &mut RandomSource::seeded(seed), Timestamp32(5)).unwrap();
    let rights = AccessRights::new(true, true, false);
    let mut server = BackendServer::new(registry.clone(), MAC);
    let issued = server
        .issue_grant("UAV-O", &TagSelection::All, rights, Timestamp32(100), Timestamp32(900), Timestamp32(100))
        .unwrap();
    let window = *issued.grant.window();
    (registry, UavState::with_grant(issued), window, rights)
}

#[test]
fn auth_messages_match_oracle() {
    let (registry, uav, window, rights) = fixture(1);
    let engine = ProtocolEngine::new(MAC);
    let mut rng = RandomSource::seeded(2);
    let mut c = OpCounters::default();
    for entry in registry.entries() {
        let id = *entry.tag_id.as_bytes();
        let k = common::tag_key(&id, 100, 900, &rights.to_bytes());
        let mut tag = TagState::new(entry.tag_id, Timestamp32(101));
        let (a, mut session) = engine.auth_uav_start(&uav, &mut rng, &mut c).unwrap();
        let (b, mut tag_s) = engine.auth_tag_respond(&mut tag, &a, &mut rng, &mut c).unwrap().unwrap();
        let r_i = *b.tag_nonce.as_bytes();
        let r_j = *a.uav_nonce.as_bytes();
        assert_eq!(b.tag_mac.as_bytes(), &common::hmac_sha1(&k, &[r_i, r_j].concat()));

        let ScanOutcome::Authorized { reply, matched } = engine.auth_uav_process_b(&mut session, &b, Timestamp32(300), &mut c).unwrap() else {
            panic!("granted tag rejected");
        };
        assert_eq!(reply.timestamp, Timestamp32(300));
        assert_eq!(reply.uav_mac.as_bytes(), &common::hmac_sha1(&k, &[&r_i[..], &300u32.to_be_bytes()].concat()));
        let expected_ks = common::session_key(&k, 300, &r_i, 100, 900);
        assert_eq!(matched.session_key.as_bytes(), &expected_ks);
        let tag_ks = engine.auth_tag_finish(&mut tag_s, &mut tag, &reply, &mut c).unwrap();
        assert_eq!(tag_ks.as_bytes(), &expected_ks);
        assert_eq!(window.to_bytes(), [0, 0, 0, 100, 0, 0, 3, 132]);
    }
}

#[test]
fn search_messages_match_oracle() {
    let (registry, uav, _, rights) = fixture(3);
    let engine = ProtocolEngine::new(MAC);
    let mut rng = RandomSource::seeded(4);
    let mut c = OpCounters::default();
    for (n, entry) in registry.entries().iter().enumerate() {
        let id = *entry.tag_id.as_bytes();
        let k = common::tag_key(&id, 100, 900, &rights.to_bytes());
        let target = uavtag::wire::TempId::from_bytes(common::temp_id(&id, 100));
        let mut tag = TagState::new(entry.tag_id, Timestamp32(101));
        let t_j = 200 + n as u32;
        let (sa, pending) = engine.search_uav_start(&uav, &target, Timestamp32(t_j), &mut c).unwrap();
        assert_eq!(sa.query_mac.as_bytes(), &common::hmac_sha1(&k, &t_j.to_be_bytes()));
        let reply = engine.search_tag_respond(&mut tag, &sa, &mut rng, &mut c).unwrap().unwrap();
        let r_i = *reply.reply.tag_nonce.as_bytes();
        assert_eq!(reply.reply.tag_mac.as_bytes(), &common::hmac_sha1(&k, &[&t_j.to_be_bytes()[..], &r_i[..]].concat()));
        let ks = engine.search_uav_finish(&pending, &reply.reply, &mut c).unwrap();
        assert_eq!(ks.as_bytes(), &common::session_key(&k, t_j, &r_i, 100, 900));
        assert_eq!(tag.t_sys(), Timestamp32(t_j));
    }
}
