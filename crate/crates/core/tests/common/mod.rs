//! Reference implementations shared by the integration tests. Nothing here
//! calls into the crate's crypto: SHA-1 and HMAC are written out from their
//! definitions so that agreement means something.

#![allow(dead_code)]

pub fn sha1(data: &[u8]) -> [u8; 20] {
    let mut h: [u32; 5] = [0x6745_2301, 0xEFCD_AB89, 0x98BA_DCFE, 0x1032_5476, 0xC3D2_E1F0];
    let mut msg = data.to_vec();
    let bit_len = (data.len() as u64) * 8;
    msg.push(0x80);
    while msg.len() % 64 != 56 {
        msg.push(0);
    }
    msg.extend_from_slice(&bit_len.to_be_bytes());
    for block in msg.chunks(64) {
        let mut w = [0u32; 80];
        for (i, word) in block.chunks(4).enumerate() {
            w[i] = u32::from_be_bytes([word[0], word[1], word[2], word[3]]);
        }
        for i in 16..80 {
            w[i] = (w[i - 3] ^ w[i - 8] ^ w[i - 14] ^ w[i - 16]).rotate_left(1);
        }
        let [mut a, mut b, mut c, mut d, mut e] = h;
        for (i, wi) in w.iter().enumerate() {
            let (f, k) = match i {
                0..=19 => ((b & c) | (!b & d), 0x5A82_7999),
                20..=39 => (b ^ c ^ d, 0x6ED9_EBA1),
                40..=59 => ((b & c) | (b & d) | (c & d), 0x8F1B_BCDC),
                _ => (b ^ c ^ d, 0xCA62_C1D6),
            };
            let t = a.rotate_left(5).wrapping_add(f).wrapping_add(e).wrapping_add(k).wrapping_add(*wi);
            e = d;
            d = c;
            c = b.rotate_left(30);
            b = a;
            a = t;
        }
        for (x, y) in h.iter_mut().zip([a, b, c, d, e]) {
            *x = x.wrapping_add(y);
        }
    }
    let mut out = [0u8; 20];
    for (i, x) in h.iter().enumerate() {
        out[4 * i..4 * i + 4].copy_from_slice(&x.to_be_bytes());
    }
    out
}

pub fn hmac_sha1(key: &[u8], msg: &[u8]) -> [u8; 20] {
    let mut k = [0u8; 64];
    if key.len() > 64 {
        k[..20].copy_from_slice(&sha1(key));
    } else {
        k[..key.len()].copy_from_slice(key);
    }
    let inner: Vec<u8> = k.iter().map(|b| b ^ 0x36).chain(msg.iter().copied()).collect();
    let outer: Vec<u8> = k.iter().map(|b| b ^ 0x5c).chain(sha1(&inner)).collect();
    sha1(&outer)
}

/// `MAC_id(T0 || TZ || AR)`
pub fn tag_key(id: &[u8; 16], t0: u32, tz: u32, rights: &[u8; 16]) -> [u8; 20] {
    let mut m = Vec::with_capacity(24);
    m.extend_from_slice(&t0.to_be_bytes());
    m.extend_from_slice(&tz.to_be_bytes());
    m.extend_from_slice(rights);
    hmac_sha1(id, &m)
}

/// First 128 bits of `MAC_id(T0)`.
pub fn temp_id(id: &[u8; 16], t0: u32) -> [u8; 16] {
    let full = hmac_sha1(id, &t0.to_be_bytes());
    full[..16].try_into().unwrap()
}

/// `MAC_K(t_j || r_i || T0 || TZ)`
pub fn session_key(key: &[u8; 20], t_j: u32, r_i: &[u8; 16], t0: u32, tz: u32) -> [u8; 20] {
    let mut m = Vec::with_capacity(28);
    m.extend_from_slice(&t_j.to_be_bytes());
    m.extend_from_slice(r_i);
    m.extend_from_slice(&t0.to_be_bytes());
    m.extend_from_slice(&tz.to_be_bytes());
    hmac_sha1(key, &m)
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
