//! TLS ClientHello server-name extraction.
//!
//! Every length field is checked against both the bytes available and the
//! enclosing declared length before it is followed.

const CONTENT_HANDSHAKE: u8 = 0x16;
const HANDSHAKE_CLIENT_HELLO: u8 = 0x01;
const EXT_SERVER_NAME: u16 = 0x0000;
const NAME_TYPE_HOST: u8 = 0x00;
const MAX_RECORD_LEN: usize = 16384 + 2048;

/// Outcome of parsing the first bytes of a TCP direction.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum HelloParse {
    /// A complete ClientHello; the server name if it carried one.
    Complete(Option<String>),
    /// Looks like a ClientHello that continues in later segments.
    Incomplete,
    /// Not a ClientHello, or malformed.
    NotClientHello,
}

/// Server name of a TLS ClientHello, or `None` for anything else.
pub fn extract_sni(payload: &[u8]) -> Option<String> {
    match parse_client_hello(payload) {
        HelloParse::Complete(name) => name,
        _ => None,
    }
}

pub fn parse_client_hello(buf: &[u8]) -> HelloParse {
    // Gather handshake bytes from consecutive handshake records.
    let mut pos = 0;
    let mut single: Option<&[u8]> = None;
    let mut joined: Vec<u8> = Vec::new();
    loop {
        if buf.len() < pos + 5 {
            if pos == 0 && !buf.is_empty() && buf[0] != CONTENT_HANDSHAKE {
                return HelloParse::NotClientHello;
            }
            return HelloParse::Incomplete;
        }
        if buf[pos] != CONTENT_HANDSHAKE || buf[pos + 1] != 0x03 {
            return HelloParse::NotClientHello;
        }
        let rec_len = u16::from_be_bytes([buf[pos + 3], buf[pos + 4]]) as usize;
        if rec_len == 0 || rec_len > MAX_RECORD_LEN {
            return HelloParse::NotClientHello;
        }
        let start = pos + 5;
        let end = (start + rec_len).min(buf.len());
        let fragment = &buf[start..end];
        if pos == 0 && end == start + rec_len {
            single = Some(fragment);
        } else {
            if let Some(s) = single.take() {
                joined.extend_from_slice(s);
            }
            joined.extend_from_slice(fragment);
        }
        let handshake: &[u8] = single.unwrap_or(&joined);
        match parse_handshake(handshake) {
            HelloParse::Incomplete if end < start + rec_len => return HelloParse::Incomplete,
            HelloParse::Incomplete => pos = end,
            other => return other,
        }
    }
}

fn parse_handshake(hs: &[u8]) -> HelloParse {
    if hs.len() < 4 {
        return HelloParse::Incomplete;
    }
    if hs[0] != HANDSHAKE_CLIENT_HELLO {
        return HelloParse::NotClientHello;
    }
    let body_len = ((hs[1] as usize) << 16) | ((hs[2] as usize) << 8) | hs[3] as usize;
    if hs.len() < 4 + body_len {
        return HelloParse::Incomplete;
    }
    match parse_hello_body(&hs[4..4 + body_len]) {
        Some(name) => HelloParse::Complete(name),
        None => HelloParse::NotClientHello,
    }
}

/// `None` when malformed, `Some(None)` when well formed without a server name.
fn parse_hello_body(body: &[u8]) -> Option<Option<String>> {
    let mut r = Reader::new(body);
    r.skip(2 + 32)?; // legacy_version, random
    let sid = r.u8()? as usize;
    r.skip(sid)?;
    let suites = r.u16()? as usize;
    r.skip(suites)?;
    let comp = r.u8()? as usize;
    r.skip(comp)?;
    if r.remaining() == 0 {
        return Some(None);
    }
    let ext_len = r.u16()? as usize;
    let mut exts = Reader::new(r.take(ext_len)?);
    while exts.remaining() > 0 {
        let ty = exts.u16()?;
        let len = exts.u16()? as usize;
        let data = exts.take(len)?;
        if ty == EXT_SERVER_NAME {
            return Some(parse_server_name_ext(data));
        }
    }
    Some(None)
}

fn parse_server_name_ext(data: &[u8]) -> Option<String> {
    let mut r = Reader::new(data);
    let list_len = r.u16()? as usize;
    let mut list = Reader::new(r.take(list_len)?);
    while list.remaining() > 0 {
        let ty = list.u8()?;
        let len = list.u16()? as usize;
        let name = list.take(len)?;
        if ty == NAME_TYPE_HOST {
            return valid_host(name);
        }
    }
    None
}

fn valid_host(name: &[u8]) -> Option<String> {
    if name.is_empty() || name.len() > 253 {
        return None;
    }
    if !name.iter().all(|&c| c.is_ascii_alphanumeric() || matches!(c, b'-' | b'.' | b'_')) {
        return None;
    }
    Some(String::from_utf8_lossy(name).to_ascii_lowercase())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Reader { buf, pos: 0 }
    }

    fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        if self.remaining() < n {
            return None;
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Some(s)
    }

    fn skip(&mut self, n: usize) -> Option<()> {
        self.take(n).map(|_| ())
    }

    fn u8(&mut self) -> Option<u8> {
        self.take(1).map(|b| b[0])
    }

    fn u16(&mut self) -> Option<u16> {
        self.take(2).map(|b| u16::from_be_bytes([b[0], b[1]]))
    }
}
