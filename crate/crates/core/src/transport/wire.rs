//! Loopback wire backend.
//!
//! Frames, all integers little-endian:
//!
//! ```text
//! request  = magic 0x4F53 (u16) | opcode u8 (0x01 READ, 0x02 WRITE) | offset u64 | length u32 | payload (WRITE only)
//! response = status u8 (0x00 OK, 0x01 RANGE, 0x02 MALFORMED) | length u32 | payload (READ only)
//! ```
//!
//! One byte-stream connection per client, frames back to back. A batch is
//! pipelined: all request frames are written, then all responses read.
//! The server does nothing but apply frames to its region; it has no view
//! of who sent what.

use std::io::{self, BufReader, BufWriter, ErrorKind, Read, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::Instant;

use crate::error::{Error, Result};
use crate::transport::{check_range, check_write, BatchMode, Meter, NetProfile, RegionStore, Transport, TransportMetrics};

pub const MAGIC: u16 = 0x4F53;
pub const REQUEST_HEADER_BYTES: usize = 15;
pub const RESPONSE_HEADER_BYTES: usize = 5;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u8)]
pub enum Opcode {
    Read = 0x01,
    Write = 0x02,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u8)]
pub enum Status {
    Ok = 0x00,
    Range = 0x01,
    Malformed = 0x02,
}

impl Status {
    pub fn from_byte(b: u8) -> Option<Status> {
        match b {
            0x00 => Some(Status::Ok),
            0x01 => Some(Status::Range),
            0x02 => Some(Status::Malformed),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RequestHeader {
    pub opcode: Opcode,
    pub offset: u64,
    pub length: u32,
}

impl RequestHeader {
    pub fn encode(&self) -> [u8; REQUEST_HEADER_BYTES] {
        let mut out = [0u8; REQUEST_HEADER_BYTES];
        out[0..2].copy_from_slice(&MAGIC.to_le_bytes());
        out[2] = self.opcode as u8;
        out[3..11].copy_from_slice(&self.offset.to_le_bytes());
        out[11..15].copy_from_slice(&self.length.to_le_bytes());
        out
    }

    /// `None` for a bad magic or unknown opcode.
    pub fn decode(bytes: &[u8; REQUEST_HEADER_BYTES]) -> Option<RequestHeader> {
        if u16::from_le_bytes([bytes[0], bytes[1]]) != MAGIC {
            return None;
        }
        let opcode = match bytes[2] {
            0x01 => Opcode::Read,
            0x02 => Opcode::Write,
            _ => return None,
        };
        Some(RequestHeader {
            opcode,
            offset: u64::from_le_bytes(bytes[3..11].try_into().unwrap()),
            length: u32::from_le_bytes(bytes[11..15].try_into().unwrap()),
        })
    }
}

pub fn encode_response(status: Status, payload: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(RESPONSE_HEADER_BYTES + payload.len());
    out.push(status as u8);
    out.extend_from_slice(&(payload.len() as u32).to_le_bytes());
    out.extend_from_slice(payload);
    out
}

fn write_response<W: Write>(w: &mut W, status: Status, payload: &[u8]) -> io::Result<()> {
    w.write_all(&[status as u8])?;
    w.write_all(&(payload.len() as u32).to_le_bytes())?;
    w.write_all(payload)
}

/// Reads one response frame: status byte and payload.
pub fn read_response<R: Read>(r: &mut R) -> io::Result<(u8, Vec<u8>)> {
    let mut header = [0u8; RESPONSE_HEADER_BYTES];
    r.read_exact(&mut header)?;
    let len = u32::from_le_bytes(header[1..5].try_into().unwrap()) as usize;
    let mut payload = vec![0; len];
    r.read_exact(&mut payload)?;
    Ok((header[0], payload))
}

/// Serves a region over TCP.
#[derive(Debug)]
pub struct WireServer {
    listener: TcpListener,
    region: Arc<RegionStore>,
}

impl WireServer {
    pub fn bind(addr: impl ToSocketAddrs, region: Arc<RegionStore>) -> Result<WireServer> {
        Ok(WireServer { listener: TcpListener::bind(addr)?, region })
    }

    pub fn local_addr(&self) -> Result<SocketAddr> {
        Ok(self.listener.local_addr()?)
    }

    pub fn region(&self) -> &Arc<RegionStore> {
        &self.region
    }

    /// Accepts connections until the process exits.
    pub fn run(self) -> Result<()> {
        let stop = Arc::new(AtomicBool::new(false));
        self.accept_loop(&stop)
    }

    /// Runs the accept loop on a background thread.
    pub fn spawn(self) -> Result<ServerHandle> {
        let addr = self.local_addr()?;
        let stop = Arc::new(AtomicBool::new(false));
        let flag = Arc::clone(&stop);
        let thread = thread::spawn(move || {
            let _ = self.accept_loop(&flag);
        });
        Ok(ServerHandle { addr, stop, thread: Some(thread) })
    }

    fn accept_loop(&self, stop: &AtomicBool) -> Result<()> {
        for stream in self.listener.incoming() {
            if stop.load(Ordering::SeqCst) {
                break;
            }
            let stream = match stream {
                Ok(s) => s,
                Err(_) => continue,
            };
            let region = Arc::clone(&self.region);
            thread::spawn(move || {
                let _ = serve_connection(stream, &region);
            });
        }
        Ok(())
    }
}

/// Handle to a background server; stops accepting on drop.
#[derive(Debug)]
pub struct ServerHandle {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    thread: Option<JoinHandle<()>>,
}

impl ServerHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn shutdown(mut self) {
        self.stop_now();
    }

    fn stop_now(&mut self) {
        if let Some(thread) = self.thread.take() {
            self.stop.store(true, Ordering::SeqCst);
            // wake the blocking accept
            let _ = TcpStream::connect(self.addr);
            let _ = thread.join();
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        self.stop_now();
    }
}

fn serve_connection(stream: TcpStream, region: &RegionStore) -> io::Result<()> {
    stream.set_nodelay(true)?;
    let mut reader = BufReader::with_capacity(1 << 16, stream.try_clone()?);
    let mut writer = BufWriter::with_capacity(1 << 16, stream);
    loop {
        if reader.buffer().is_empty() {
            writer.flush()?;
        }
        let mut raw = [0u8; REQUEST_HEADER_BYTES];
        match reader.read_exact(&mut raw) {
            Ok(()) => {}
            Err(e) if e.kind() == ErrorKind::UnexpectedEof => return Ok(()),
            Err(e) => return Err(e),
        }
        let Some(header) = RequestHeader::decode(&raw) else {
            // framing is lost; report and hang up
            write_response(&mut writer, Status::Malformed, &[])?;
            writer.flush()?;
            let _ = writer.get_ref().shutdown(Shutdown::Both);
            return Ok(());
        };
        match header.opcode {
            Opcode::Read => match region.read(header.offset, header.length as usize) {
                Ok(data) => write_response(&mut writer, Status::Ok, &data)?,
                Err(_) => write_response(&mut writer, Status::Range, &[])?,
            },
            Opcode::Write => {
                if check_range(region.size(), header.offset, header.length as u64).is_err() {
                    // refuse to buffer a payload that cannot land anywhere
                    write_response(&mut writer, Status::Range, &[])?;
                    writer.flush()?;
                    let _ = writer.get_ref().shutdown(Shutdown::Both);
                    return Ok(());
                }
                let mut payload = vec![0; header.length as usize];
                reader.read_exact(&mut payload)?;
                let status = match region.write(header.offset, &payload) {
                    Ok(()) => Status::Ok,
                    Err(Error::Range { .. }) => Status::Range,
                    Err(_) => Status::Malformed,
                };
                write_response(&mut writer, status, &[])?;
            }
        }
    }
}

/// Client side of the wire backend.
#[derive(Debug)]
pub struct WireTransport {
    reader: BufReader<TcpStream>,
    writer: BufWriter<TcpStream>,
    region_bytes: u64,
    slot_bytes: usize,
    meter: Meter,
}

impl WireTransport {
    pub fn connect(
        addr: impl ToSocketAddrs,
        region_bytes: u64,
        slot_bytes: usize,
        profile: NetProfile,
        batch: BatchMode,
    ) -> Result<WireTransport> {
        let stream = TcpStream::connect(addr)?;
        stream.set_nodelay(true)?;
        Ok(WireTransport {
            reader: BufReader::with_capacity(1 << 16, stream.try_clone()?),
            writer: BufWriter::with_capacity(1 << 16, stream),
            region_bytes,
            slot_bytes,
            meter: Meter::new(profile, batch, slot_bytes),
        })
    }

    fn length(len: usize) -> Result<u32> {
        u32::try_from(len).map_err(|_| Error::argument(format!("segment of {len} bytes exceeds the frame limit")))
    }

    fn status(&self, byte: u8, offset: u64, len: u64) -> Result<()> {
        match Status::from_byte(byte) {
            Some(Status::Ok) => Ok(()),
            Some(Status::Range) => Err(Error::Range { offset, len, size: self.region_bytes }),
            Some(Status::Malformed) | None => Err(Error::RemoteMalformed),
        }
    }
}

impl Transport for WireTransport {
    fn region_bytes(&self) -> u64 {
        self.region_bytes
    }

    fn slot_bytes(&self) -> usize {
        self.slot_bytes
    }

    fn read_batch(&mut self, ranges: &[(u64, usize)]) -> Result<Vec<Vec<u8>>> {
        let start = Instant::now();
        for &(offset, len) in ranges {
            check_range(self.region_bytes, offset, len as u64)?;
        }
        for &(offset, len) in ranges {
            let header = RequestHeader { opcode: Opcode::Read, offset, length: Self::length(len)? };
            self.writer.write_all(&header.encode())?;
        }
        self.writer.flush()?;
        let mut out = Vec::with_capacity(ranges.len());
        let mut first_err = None;
        for &(offset, len) in ranges {
            let (status, payload) = read_response(&mut self.reader)?;
            match self.status(status, offset, len as u64) {
                Ok(()) if payload.len() == len => out.push(payload),
                Ok(()) => first_err = first_err.or(Some(Error::RemoteMalformed)),
                Err(e) => first_err = first_err.or(Some(e)),
            }
        }
        if let Some(e) = first_err {
            return Err(e);
        }
        self.meter.charge_read(ranges.iter().map(|r| r.1));
        self.meter.add_elapsed(start.elapsed());
        Ok(out)
    }

    fn write_batch(&mut self, segments: &[(u64, &[u8])]) -> Result<()> {
        let start = Instant::now();
        for (offset, payload) in segments {
            check_write(self.region_bytes, self.slot_bytes, *offset, payload.len() as u64)?;
        }
        for (offset, payload) in segments {
            let header = RequestHeader { opcode: Opcode::Write, offset: *offset, length: Self::length(payload.len())? };
            self.writer.write_all(&header.encode())?;
            self.writer.write_all(payload)?;
        }
        self.writer.flush()?;
        let mut first_err = None;
        for (offset, payload) in segments {
            let (status, _) = read_response(&mut self.reader)?;
            if let Err(e) = self.status(status, *offset, payload.len() as u64) {
                first_err = first_err.or(Some(e));
            }
        }
        if let Some(e) = first_err {
            return Err(e);
        }
        self.meter.charge_write(segments.iter().map(|s| s.1.len()));
        self.meter.add_elapsed(start.elapsed());
        Ok(())
    }

    fn metrics(&self) -> &TransportMetrics {
        self.meter.metrics()
    }

    fn set_metrics(&mut self, metrics: TransportMetrics) {
        self.meter.set_metrics(metrics)
    }

    fn profile(&self) -> &NetProfile {
        self.meter.profile()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn request_header_layout() {
        let h = RequestHeader { opcode: Opcode::Write, offset: 0x0102_0304_0506_0708, length: 564 };
        let bytes = h.encode();
        assert_eq!(
            bytes,
            [0x53, 0x4F, 0x02, 0x08, 0x07, 0x06, 0x05, 0x04, 0x03, 0x02, 0x01, 0x34, 0x02, 0x00, 0x00]
        );
        assert_eq!(RequestHeader::decode(&bytes), Some(h));
        let mut bad = bytes;
        bad[0] = 0;
        assert_eq!(RequestHeader::decode(&bad), None);
        let mut bad = bytes;
        bad[2] = 0x03;
        assert_eq!(RequestHeader::decode(&bad), None);
    }

    #[test]
    fn response_layout() {
        assert_eq!(encode_response(Status::Ok, &[9, 8]), vec![0x00, 2, 0, 0, 0, 9, 8]);
        assert_eq!(encode_response(Status::Range, &[]), vec![0x01, 0, 0, 0, 0]);
        let mut cursor = io::Cursor::new(encode_response(Status::Ok, &[1, 2, 3]));
        assert_eq!(read_response(&mut cursor).unwrap(), (0, vec![1, 2, 3]));
    }
}
