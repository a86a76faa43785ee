//! Minimal DNS wire codec for the stub client: enough of RFC 1035 to
//! encode one question and decode answer sections with name compression.

use std::net::{Ipv4Addr, Ipv6Addr};

use thiserror::Error;

use super::RecordType;
use crate::model::DomainName;

pub const TYPE_A: u16 = 1;
pub const TYPE_CNAME: u16 = 5;
pub const TYPE_PTR: u16 = 12;
pub const TYPE_MX: u16 = 15;
pub const TYPE_TXT: u16 = 16;
pub const TYPE_AAAA: u16 = 28;
const CLASS_IN: u16 = 1;

pub fn type_code(rrtype: RecordType) -> u16 {
    match rrtype {
        RecordType::A => TYPE_A,
        RecordType::Aaaa => TYPE_AAAA,
        RecordType::Mx => TYPE_MX,
        RecordType::Txt => TYPE_TXT,
        RecordType::Ptr => TYPE_PTR,
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum WireError {
    #[error("message truncated at offset {0}")]
    Truncated(usize),
    #[error("bad label length {0}")]
    BadLabel(usize),
    #[error("compression pointer loop")]
    PointerLoop,
    #[error("name too long to encode")]
    NameTooLong,
}

/// One decoded resource record from the answer section.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DecodedRecord {
    pub rtype: u16,
    pub ttl: u32,
    pub rdata: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DecodedResponse {
    pub id: u16,
    pub rcode: u8,
    pub truncated: bool,
    pub answers: Vec<DecodedRecord>,
}

impl DecodedResponse {
    /// Records of the wanted type, as (rdata, ttl) pairs.
    pub fn records_of(&self, rrtype: RecordType) -> Vec<(String, u32)> {
        let code = type_code(rrtype);
        self.answers
            .iter()
            .filter(|r| r.rtype == code)
            .map(|r| (r.rdata.clone(), r.ttl))
            .collect()
    }

    /// True when the answer section contains a CNAME link.
    pub fn followed_cname(&self) -> bool {
        self.answers.iter().any(|r| r.rtype == TYPE_CNAME)
    }
}

fn write_name(buf: &mut Vec<u8>, name: &DomainName) -> Result<(), WireError> {
    for label in name.labels() {
        if label.len() > 63 {
            return Err(WireError::NameTooLong);
        }
        buf.push(label.len() as u8);
        buf.extend_from_slice(label.as_bytes());
    }
    buf.push(0);
    Ok(())
}

/// A recursive query for one (name, type) question.
pub fn encode_query(id: u16, name: &DomainName, rrtype: RecordType) -> Result<Vec<u8>, WireError> {
    let mut buf = Vec::with_capacity(name.as_str().len() + 18);
    buf.extend_from_slice(&id.to_be_bytes());
    buf.extend_from_slice(&0x0100u16.to_be_bytes()); // RD set
    buf.extend_from_slice(&1u16.to_be_bytes()); // QDCOUNT
    buf.extend_from_slice(&0u16.to_be_bytes());
    buf.extend_from_slice(&0u16.to_be_bytes());
    buf.extend_from_slice(&0u16.to_be_bytes());
    write_name(&mut buf, name)?;
    buf.extend_from_slice(&type_code(rrtype).to_be_bytes());
    buf.extend_from_slice(&CLASS_IN.to_be_bytes());
    Ok(buf)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn u8(&mut self) -> Result<u8, WireError> {
        let b = *self
            .buf
            .get(self.pos)
            .ok_or(WireError::Truncated(self.pos))?;
        self.pos += 1;
        Ok(b)
    }

    fn u16(&mut self) -> Result<u16, WireError> {
        Ok(u16::from_be_bytes([self.u8()?, self.u8()?]))
    }

    fn u32(&mut self) -> Result<u32, WireError> {
        Ok(u32::from_be_bytes([
            self.u8()?,
            self.u8()?,
            self.u8()?,
            self.u8()?,
        ]))
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], WireError> {
        let end = self
            .pos
            .checked_add(n)
            .ok_or(WireError::Truncated(self.pos))?;
        let slice = self
            .buf
            .get(self.pos..end)
            .ok_or(WireError::Truncated(self.pos))?;
        self.pos = end;
        Ok(slice)
    }

    /// Reads a possibly-compressed name starting at the cursor, leaving
    /// the cursor just past the name's in-place representation.
    fn name(&mut self) -> Result<String, WireError> {
        let mut labels: Vec<String> = Vec::new();
        let mut pos = self.pos;
        let mut jumped = false;
        let mut jumps = 0;
        loop {
            let len = *self.buf.get(pos).ok_or(WireError::Truncated(pos))? as usize;
            if len & 0xC0 == 0xC0 {
                let lo = *self.buf.get(pos + 1).ok_or(WireError::Truncated(pos))? as usize;
                if !jumped {
                    self.pos = pos + 2;
                    jumped = true;
                }
                pos = ((len & 0x3F) << 8) | lo;
                jumps += 1;
                if jumps > 64 {
                    return Err(WireError::PointerLoop);
                }
                continue;
            }
            if len == 0 {
                if !jumped {
                    self.pos = pos + 1;
                }
                break;
            }
            if len > 63 {
                return Err(WireError::BadLabel(len));
            }
            let bytes = self
                .buf
                .get(pos + 1..pos + 1 + len)
                .ok_or(WireError::Truncated(pos))?;
            labels.push(bytes.iter().map(|b| *b as char).collect());
            pos += 1 + len;
        }
        Ok(labels.join("."))
    }
}

fn decode_rdata(rtype: u16, cursor: &mut Cursor<'_>, rdlen: usize) -> Result<String, WireError> {
    let rdata_start = cursor.pos;
    let out = match rtype {
        TYPE_A => {
            let bytes = cursor.take(4)?;
            Ipv4Addr::new(bytes[0], bytes[1], bytes[2], bytes[3]).to_string()
        }
        TYPE_AAAA => {
            let bytes: [u8; 16] = cursor.take(16)?.try_into().unwrap();
            Ipv6Addr::from(bytes).to_string()
        }
        TYPE_MX => {
            let pref = cursor.u16()?;
            let name = cursor.name()?;
            if name.is_empty() {
                format!("{pref} .")
            } else {
                format!("{pref} {name}.")
            }
        }
        TYPE_PTR | TYPE_CNAME => format!("{}.", cursor.name()?),
        TYPE_TXT => {
            let mut text = String::new();
            while cursor.pos < rdata_start + rdlen {
                let len = cursor.u8()? as usize;
                let bytes = cursor.take(len)?;
                text.extend(bytes.iter().map(|b| *b as char));
            }
            text
        }
        _ => {
            cursor.take(rdlen)?;
            String::new()
        }
    };
    // rdata may embed compressed names; always resync to the declared end
    cursor.pos = rdata_start + rdlen;
    Ok(out)
}

pub fn decode_response(buf: &[u8]) -> Result<DecodedResponse, WireError> {
    let mut cursor = Cursor { buf, pos: 0 };
    let id = cursor.u16()?;
    let flags = cursor.u16()?;
    let qdcount = cursor.u16()?;
    let ancount = cursor.u16()?;
    let _nscount = cursor.u16()?;
    let _arcount = cursor.u16()?;

    let rcode = (flags & 0x000F) as u8;
    let truncated = flags & 0x0200 != 0;

    for _ in 0..qdcount {
        cursor.name()?;
        cursor.u16()?; // qtype
        cursor.u16()?; // qclass
    }

    let mut answers = Vec::with_capacity(ancount as usize);
    for _ in 0..ancount {
        cursor.name()?;
        let rtype = cursor.u16()?;
        let _class = cursor.u16()?;
        let ttl = cursor.u32()?;
        let rdlen = cursor.u16()? as usize;
        let rdata = decode_rdata(rtype, &mut cursor, rdlen)?;
        answers.push(DecodedRecord { rtype, ttl, rdata });
    }

    Ok(DecodedResponse {
        id,
        rcode,
        truncated,
        answers,
    })
}
