//! TLS ClientHello records of an exact size.

const EXT_SERVER_NAME: u16 = 0x0000;
const EXT_SUPPORTED_GROUPS: u16 = 0x000a;
const EXT_PADDING: u16 = 0x0015;
const EXT_SUPPORTED_VERSIONS: u16 = 0x002b;

const SUITES: [u16; 8] = [0x1301, 0x1302, 0x1303, 0xc02b, 0xc02f, 0xc02c, 0xc030, 0xcca9];

fn put_u16(v: &mut Vec<u8>, x: u16) {
    v.extend_from_slice(&x.to_be_bytes());
}

fn ext(v: &mut Vec<u8>, ty: u16, data: &[u8]) {
    put_u16(v, ty);
    put_u16(v, data.len() as u16);
    v.extend_from_slice(data);
}

fn build(name: Option<&str>, session_id_len: usize, padding: Option<usize>) -> Vec<u8> {
    let mut exts = Vec::new();
    if let Some(name) = name {
        let mut sni = Vec::new();
        put_u16(&mut sni, (name.len() + 3) as u16);
        sni.push(0);
        put_u16(&mut sni, name.len() as u16);
        sni.extend_from_slice(name.as_bytes());
        ext(&mut exts, EXT_SERVER_NAME, &sni);
    }
    ext(&mut exts, EXT_SUPPORTED_GROUPS, &[0x00, 0x04, 0x00, 0x1d, 0x00, 0x17]);
    ext(&mut exts, EXT_SUPPORTED_VERSIONS, &[0x04, 0x03, 0x04, 0x03, 0x03]);
    if let Some(n) = padding {
        ext(&mut exts, EXT_PADDING, &vec![0u8; n]);
    }

    let mut body = vec![0x03, 0x03];
    body.extend((0..32u8).map(|i| i.wrapping_mul(37).wrapping_add(11)));
    body.push(session_id_len as u8);
    body.extend((0..session_id_len as u8).map(|i| i ^ 0x5a));
    put_u16(&mut body, (SUITES.len() * 2) as u16);
    for s in SUITES {
        put_u16(&mut body, s);
    }
    body.extend_from_slice(&[0x01, 0x00]);
    put_u16(&mut body, exts.len() as u16);
    body.extend_from_slice(&exts);

    let mut hs = vec![0x01];
    hs.extend_from_slice(&(body.len() as u32).to_be_bytes()[1..]);
    hs.extend_from_slice(&body);

    let mut rec = vec![0x16, 0x03, 0x01];
    put_u16(&mut rec, hs.len() as u16);
    rec.extend_from_slice(&hs);
    rec
}

/// Smallest record `client_hello` can produce for `name`.
pub fn min_hello_len(name: Option<&str>) -> usize {
    build(name, 0, None).len()
}

/// A single-record ClientHello of exactly `total_len` bytes, padded with
/// the padding extension. Panics below [`min_hello_len`].
pub fn client_hello(name: Option<&str>, total_len: usize) -> Vec<u8> {
    let base = build(name, 32, None).len();
    let out = if total_len <= base {
        assert!(total_len >= min_hello_len(name), "ClientHello of {total_len} bytes is too small");
        build(name, 32 - (base - total_len), None)
    } else if total_len >= base + 4 {
        build(name, 32, Some(total_len - base - 4))
    } else {
        // 1 to 3 spare bytes: shorten the session id to fit an empty pad.
        let shrink = base + 4 - total_len;
        build(name, 32 - shrink, Some(0))
    };
    debug_assert_eq!(out.len(), total_len);
    out
}
