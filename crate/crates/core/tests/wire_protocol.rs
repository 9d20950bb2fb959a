use std::io::{Read, Write};
use std::net::TcpStream;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread;

use onesided_oram::transport::wire::{read_response, Opcode, RequestHeader, ServerHandle, Status, MAGIC};
use onesided_oram::transport::{SimTransport, WireServer, WireTransport};
use onesided_oram::{BatchMode, Error, NetProfile, RegionStore, Transport};

const SLOT: usize = 64;
const SLOTS: u64 = 32;

fn server() -> (Arc<RegionStore>, ServerHandle) {
    let region = Arc::new(RegionStore::new(SLOTS * SLOT as u64, SLOT).unwrap());
    let handle = WireServer::bind("127.0.0.1:0", Arc::clone(&region)).unwrap().spawn().unwrap();
    (region, handle)
}

fn frame(opcode: Opcode, offset: u64, payload: &[u8], read_len: u32) -> Vec<u8> {
    let length = if opcode == Opcode::Write { payload.len() as u32 } else { read_len };
    let mut out = RequestHeader { opcode, offset, length }.encode().to_vec();
    out.extend_from_slice(payload);
    out
}

#[test]
fn raw_read_and_write() {
    let (region, handle) = server();
    let mut s = TcpStream::connect(handle.addr()).unwrap();
    s.write_all(&frame(Opcode::Write, SLOT as u64, &[9u8; SLOT], 0)).unwrap();
    assert_eq!(read_response(&mut s).unwrap(), (Status::Ok as u8, vec![]));
    s.write_all(&frame(Opcode::Read, SLOT as u64 - 4, &[], 8)).unwrap();
    assert_eq!(read_response(&mut s).unwrap(), (Status::Ok as u8, vec![0, 0, 0, 0, 9, 9, 9, 9]));
    assert_eq!(region.read(SLOT as u64, 2).unwrap(), vec![9, 9]);
}

#[test]
fn pipelined_requests_answer_in_order() {
    let (_region, handle) = server();
    let mut s = TcpStream::connect(handle.addr()).unwrap();
    let mut batch = Vec::new();
    for i in 0..8u8 {
        batch.extend(frame(Opcode::Write, i as u64 * SLOT as u64, &[i; SLOT], 0));
    }
    for i in 0..8u64 {
        batch.extend(frame(Opcode::Read, i * SLOT as u64, &[], 1));
    }
    s.write_all(&batch).unwrap();
    for _ in 0..8 {
        assert_eq!(read_response(&mut s).unwrap().0, Status::Ok as u8);
    }
    for i in 0..8u8 {
        assert_eq!(read_response(&mut s).unwrap(), (Status::Ok as u8, vec![i]));
    }
}

#[test]
fn out_of_range_read_keeps_the_connection() {
    let (_region, handle) = server();
    let mut s = TcpStream::connect(handle.addr()).unwrap();
    s.write_all(&frame(Opcode::Read, SLOTS * SLOT as u64 - 1, &[], 2)).unwrap();
    assert_eq!(read_response(&mut s).unwrap(), (Status::Range as u8, vec![]));
    s.write_all(&frame(Opcode::Read, 0, &[], 1)).unwrap();
    assert_eq!(read_response(&mut s).unwrap(), (Status::Ok as u8, vec![0]));
}

#[test]
fn misaligned_write_is_malformed() {
    let (region, handle) = server();
    let mut s = TcpStream::connect(handle.addr()).unwrap();
    s.write_all(&frame(Opcode::Write, 1, &[1u8; SLOT], 0)).unwrap();
    assert_eq!(read_response(&mut s).unwrap().0, Status::Malformed as u8);
    assert!(region.read(0, SLOT * 2).unwrap().iter().all(|&b| b == 0));
}

fn expect_hangup(s: &mut TcpStream) {
    let mut rest = Vec::new();
    s.read_to_end(&mut rest).unwrap();
    assert!(rest.is_empty());
}

#[test]
fn out_of_range_write_is_refused_and_closed() {
    let (_region, handle) = server();
    let mut s = TcpStream::connect(handle.addr()).unwrap();
    s.write_all(&RequestHeader { opcode: Opcode::Write, offset: SLOTS * SLOT as u64, length: SLOT as u32 }.encode()).unwrap();
    assert_eq!(read_response(&mut s).unwrap().0, Status::Range as u8);
    expect_hangup(&mut s);
}

#[test]
fn bad_magic_and_opcode_are_malformed() {
    let (_region, handle) = server();
    for (magic, opcode) in [(0x1234u16, 1u8), (MAGIC, 7u8)] {
        let mut s = TcpStream::connect(handle.addr()).unwrap();
        let mut raw = [0u8; 15];
        raw[0..2].copy_from_slice(&magic.to_le_bytes());
        raw[2] = opcode;
        s.write_all(&raw).unwrap();
        assert_eq!(read_response(&mut s).unwrap(), (Status::Malformed as u8, vec![]));
        expect_hangup(&mut s);
    }
}

#[test]
fn client_maps_statuses_to_errors() {
    let (_region, handle) = server();
    let mut t = WireTransport::connect(handle.addr(), SLOTS * SLOT as u64, SLOT, NetProfile::ib40(), BatchMode::PerPath).unwrap();
    assert!(matches!(t.os_read(SLOTS * SLOT as u64, 1), Err(Error::Range { .. })));
    assert!(matches!(t.os_write(3, &[0u8; SLOT]), Err(Error::Alignment { .. })));
    // still usable
    t.os_write(0, &[5u8; SLOT]).unwrap();
    assert_eq!(t.os_read(0, 2).unwrap(), vec![5, 5]);
}

#[test]
fn wire_and_sim_charge_the_same() {
    let (_region, handle) = server();
    let local = Arc::new(RegionStore::new(SLOTS * SLOT as u64, SLOT).unwrap());
    for batch in [BatchMode::PerPath, BatchMode::PerBucket, BatchMode::PerSlot] {
        let mut w = WireTransport::connect(handle.addr(), SLOTS * SLOT as u64, SLOT, NetProfile::ib100(), batch).unwrap();
        let mut s = SimTransport::new(Arc::clone(&local), NetProfile::ib100(), batch);
        let seg = vec![1u8; 2 * SLOT];
        for t in [&mut w as &mut dyn Transport, &mut s] {
            t.write_batch(&[(0, &seg), (4 * SLOT as u64, &seg)]).unwrap();
            t.read_batch(&[(0, 3 * SLOT), (10, 5)]).unwrap();
        }
        let strip = |m: &onesided_oram::TransportMetrics| (m.reads, m.writes);
        assert_eq!(strip(w.metrics()), strip(s.metrics()), "{batch:?}");
    }
}

#[test]
fn concurrent_snapshots_never_see_torn_slots() {
    let (region, handle) = server();
    let stop = Arc::new(AtomicBool::new(false));
    let watcher = {
        let region = Arc::clone(&region);
        let stop = Arc::clone(&stop);
        thread::spawn(move || {
            let mut checked = 0u64;
            while !stop.load(Ordering::Relaxed) {
                region.with_contents(|bytes| {
                    for slot in bytes.chunks(SLOT) {
                        assert!(slot.iter().all(|&b| b == slot[0]), "torn slot {slot:?}");
                    }
                });
                checked += 1;
            }
            checked
        })
    };
    let mut t = WireTransport::connect(handle.addr(), SLOTS * SLOT as u64, SLOT, NetProfile::ib40(), BatchMode::PerPath).unwrap();
    for round in 0..400u64 {
        let fill = (round % 251) as u8 + 1;
        let seg = vec![fill; 4 * SLOT];
        let at = (round * 7 % (SLOTS - 4)) * SLOT as u64;
        t.write_batch(&[(at, &seg)]).unwrap();
        // the write is acknowledged, so it must be visible
        assert_eq!(region.read(at, 4 * SLOT).unwrap(), seg);
    }
    stop.store(true, Ordering::Relaxed);
    assert!(watcher.join().unwrap() > 0);
}
