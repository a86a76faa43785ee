//! Stub resolver backend speaking plain DNS over UDP to a recursive
//! resolver, with TCP fallback on truncation. Timeouts become a Timeout
//! status (retried per policy); only transport-level failures are errors.

use std::io::{Read, Write};
use std::net::{IpAddr, SocketAddr, TcpStream, UdpSocket};
use std::sync::atomic::{AtomicU16, Ordering};
use std::time::Duration;

use super::wire::{decode_response, encode_query, DecodedResponse};
use super::{BackendError, QueryBackend, QueryResult, RecordType, ResolverPolicy};
use crate::model::{DomainName, LookupStatus};

pub struct UdpBackend {
    server: SocketAddr,
    timeout: Duration,
    retries: u32,
    next_id: AtomicU16,
}

impl UdpBackend {
    pub fn new(server: SocketAddr, policy: &ResolverPolicy) -> Self {
        UdpBackend {
            server,
            timeout: Duration::from_millis(policy.timeout_ms),
            retries: policy.retries,
            next_id: AtomicU16::new(1),
        }
    }

    /// Convenience constructor for "ip" or "ip:port" strings; the port
    /// defaults to 53.
    pub fn from_resolver_addr(addr: &str, policy: &ResolverPolicy) -> Result<Self, BackendError> {
        let server: SocketAddr = if let Ok(ip) = addr.parse::<IpAddr>() {
            SocketAddr::new(ip, 53)
        } else {
            addr.parse()
                .map_err(|_| BackendError::Unavailable(format!("bad resolver address {addr:?}")))?
        };
        Ok(UdpBackend::new(server, policy))
    }

    fn udp_exchange(&self, query: &[u8], id: u16) -> Result<Option<DecodedResponse>, BackendError> {
        let bind_addr: SocketAddr = if self.server.is_ipv4() {
            "0.0.0.0:0".parse().unwrap()
        } else {
            "[::]:0".parse().unwrap()
        };
        let socket = UdpSocket::bind(bind_addr)
            .map_err(|e| BackendError::Unavailable(format!("udp bind: {e}")))?;
        socket
            .set_read_timeout(Some(self.timeout))
            .map_err(|e| BackendError::Unavailable(format!("udp timeout: {e}")))?;
        socket
            .send_to(query, self.server)
            .map_err(|e| BackendError::Unavailable(format!("udp send: {e}")))?;

        let deadline = std::time::Instant::now() + self.timeout;
        let mut buf = [0u8; 4096];
        loop {
            match socket.recv_from(&mut buf) {
                Ok((len, from)) => {
                    if from != self.server {
                        continue;
                    }
                    if let Ok(resp) = decode_response(&buf[..len]) {
                        if resp.id == id {
                            return Ok(Some(resp));
                        }
                    }
                    // wrong id or undecodable: keep listening until the deadline
                    if std::time::Instant::now() >= deadline {
                        return Ok(None);
                    }
                }
                Err(e)
                    if e.kind() == std::io::ErrorKind::WouldBlock
                        || e.kind() == std::io::ErrorKind::TimedOut =>
                {
                    return Ok(None);
                }
                Err(e) => return Err(BackendError::Unavailable(format!("udp recv: {e}"))),
            }
        }
    }

    fn tcp_exchange(&self, query: &[u8], id: u16) -> Result<Option<DecodedResponse>, BackendError> {
        let mut stream = match TcpStream::connect_timeout(&self.server, self.timeout) {
            Ok(s) => s,
            Err(_) => return Ok(None),
        };
        let _ = stream.set_read_timeout(Some(self.timeout));
        let _ = stream.set_write_timeout(Some(self.timeout));
        let mut framed = Vec::with_capacity(query.len() + 2);
        framed.extend_from_slice(&(query.len() as u16).to_be_bytes());
        framed.extend_from_slice(query);
        if stream.write_all(&framed).is_err() {
            return Ok(None);
        }
        let mut len_buf = [0u8; 2];
        if stream.read_exact(&mut len_buf).is_err() {
            return Ok(None);
        }
        let len = u16::from_be_bytes(len_buf) as usize;
        let mut buf = vec![0u8; len];
        if stream.read_exact(&mut buf).is_err() {
            return Ok(None);
        }
        match decode_response(&buf) {
            Ok(resp) if resp.id == id => Ok(Some(resp)),
            _ => Ok(None),
        }
    }

    fn query_once(
        &self,
        name: &DomainName,
        rrtype: RecordType,
    ) -> Result<Option<QueryResult>, BackendError> {
        let id = self.next_id.fetch_add(1, Ordering::Relaxed);
        let query = encode_query(id, name, rrtype)
            .map_err(|e| BackendError::Unavailable(format!("encode: {e}")))?;

        let mut resp = match self.udp_exchange(&query, id)? {
            Some(resp) => resp,
            None => return Ok(None),
        };
        if resp.truncated {
            match self.tcp_exchange(&query, id)? {
                Some(full) => resp = full,
                None => return Ok(None),
            }
        }

        let records = resp.records_of(rrtype);
        let status = match resp.rcode {
            0 if records.is_empty() => LookupStatus::NoRecords,
            0 => LookupStatus::Ok,
            3 => LookupStatus::NxDomain,
            _ => LookupStatus::ServFail,
        };
        Ok(Some(QueryResult {
            // NXDOMAIN answers sometimes still carry CNAME chains; drop
            // records on any non-Ok status to keep the result invariant
            records: if status == LookupStatus::Ok {
                records
            } else {
                Vec::new()
            },
            is_cname: resp.followed_cname(),
            status,
        }))
    }
}

impl QueryBackend for UdpBackend {
    fn query(&self, name: &DomainName, rrtype: RecordType) -> Result<QueryResult, BackendError> {
        for _attempt in 0..=self.retries {
            if let Some(result) = self.query_once(name, rrtype)? {
                return Ok(result);
            }
        }
        Ok(QueryResult::empty(LookupStatus::Timeout))
    }
}
