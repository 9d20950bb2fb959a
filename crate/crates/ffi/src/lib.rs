//! C ABI over the one-sided ORAM client on the simulated backend.
//!
//! Every function returns an `int32_t` status. On failure the message is
//! available from `osoram_last_error` on the same thread until the next
//! call that fails. Panics are caught at the boundary and reported as
//! `OSORAM_ERR_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::sync::Arc;

use onesided_oram::client::cost_model_with;
use onesided_oram::sealing::slot_bytes_for;
use onesided_oram::transport::SimTransport;
use onesided_oram::{BatchMode, ClientConfig, Error, MixConfig, NetProfile, OneSidedOram, ReadMode, RegionStore, TreeLayout};

pub const OSORAM_OK: i32 = 0;
pub const OSORAM_ERR_NULL: i32 = 1;
pub const OSORAM_ERR_CONFIG: i32 = 2;
pub const OSORAM_ERR_ARGUMENT: i32 = 3;
pub const OSORAM_ERR_STASH_OVERFLOW: i32 = 4;
pub const OSORAM_ERR_TAMPER: i32 = 5;
pub const OSORAM_ERR_TRANSPORT: i32 = 6;
pub const OSORAM_ERR_BUFFER_TOO_SMALL: i32 = 7;
pub const OSORAM_ERR_INTERNAL: i32 = 8;
pub const OSORAM_ERR_PANIC: i32 = 9;

pub const OSORAM_PROFILE_IB40: u32 = 0;
pub const OSORAM_PROFILE_IB100: u32 = 1;

/// Client parameters. Fill with `osoram_config_default` first.
#[repr(C)]
#[derive(Clone, Copy, Debug)]
pub struct OsoramConfig {
    pub block_count: u64,
    pub bucket_capacity: u32,
    pub value_bytes: u32,
    pub stash_max: u32,
    /// Percentage of gets that run the full ORAM protocol.
    pub oram_fraction: f64,
    pub seed: u64,
    /// `OSORAM_PROFILE_IB40` or `OSORAM_PROFILE_IB100`.
    pub profile: u32,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, Default)]
pub struct OsoramMetrics {
    pub puts: u64,
    pub oram_reads: u64,
    pub one_sided_reads: u64,
    pub stash_reads: u64,
    pub absent_reads: u64,
    pub max_stash: u64,
    pub verbs: u64,
    pub bytes: u64,
    pub virtual_time_us: f64,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, Default)]
pub struct OsoramCost {
    pub oram_access_us: f64,
    pub one_sided_us: f64,
    pub mean_read_us: f64,
    pub speedup: f64,
}

/// Opaque client handle.
pub struct OsoramHandle {
    client: OneSidedOram<SimTransport>,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let msg = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(msg));
}

fn code(e: &Error) -> i32 {
    match e {
        Error::InvalidConfig(_) => OSORAM_ERR_CONFIG,
        Error::InvalidArgument(_) | Error::Range { .. } | Error::Alignment { .. } => OSORAM_ERR_ARGUMENT,
        Error::StashOverflow { .. } => OSORAM_ERR_STASH_OVERFLOW,
        Error::Tamper | Error::MalformedSlot { .. } => OSORAM_ERR_TAMPER,
        Error::Transport(_) | Error::RemoteMalformed => OSORAM_ERR_TRANSPORT,
        _ => OSORAM_ERR_INTERNAL,
    }
}

fn guard(f: impl FnOnce() -> Result<(), (i32, String)>) -> i32 {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => OSORAM_OK,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("panic inside the library".into());
            OSORAM_ERR_PANIC
        }
    }
}

fn fail(e: Error) -> (i32, String) {
    (code(&e), e.to_string())
}

fn null(what: &str) -> (i32, String) {
    (OSORAM_ERR_NULL, format!("{what} is null"))
}

fn profile(id: u32) -> Result<NetProfile, (i32, String)> {
    match id {
        OSORAM_PROFILE_IB40 => Ok(NetProfile::ib40()),
        OSORAM_PROFILE_IB100 => Ok(NetProfile::ib100()),
        other => Err((OSORAM_ERR_CONFIG, format!("unknown profile {other}"))),
    }
}

fn client_config(c: &OsoramConfig) -> ClientConfig {
    ClientConfig {
        block_count: c.block_count,
        bucket_capacity: c.bucket_capacity as usize,
        value_bytes: c.value_bytes as usize,
        stash_max: c.stash_max as usize,
        mix: MixConfig { oram_fraction: c.oram_fraction, seed: c.seed },
        read_mode: ReadMode::Slot,
    }
}

/// Message of the last failure on this thread, or NULL. Owned by the
/// library; valid until the next failing call on this thread.
#[no_mangle]
pub extern "C" fn osoram_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// # Safety
/// `out` must be null or point to writable memory for one `OsoramConfig`.
#[no_mangle]
pub unsafe extern "C" fn osoram_config_default(out: *mut OsoramConfig) -> i32 {
    guard(|| {
        let out = unsafe { out.as_mut() }.ok_or_else(|| null("out"))?;
        let d = ClientConfig::default();
        *out = OsoramConfig {
            block_count: d.block_count,
            bucket_capacity: d.bucket_capacity as u32,
            value_bytes: d.value_bytes as u32,
            stash_max: d.stash_max as u32,
            oram_fraction: d.mix.oram_fraction,
            seed: d.mix.seed,
            profile: OSORAM_PROFILE_IB40,
        };
        Ok(())
    })
}

/// Creates a client over a freshly formatted simulated region.
///
/// # Safety
/// `config` must point to a valid `OsoramConfig`; `out` to writable storage
/// for one pointer. Release the handle with `osoram_free`.
#[no_mangle]
pub unsafe extern "C" fn osoram_new(config: *const OsoramConfig, out: *mut *mut OsoramHandle) -> i32 {
    guard(|| {
        let config = unsafe { config.as_ref() }.ok_or_else(|| null("config"))?;
        let out = unsafe { out.as_mut() }.ok_or_else(|| null("out"))?;
        *out = ptr::null_mut();
        let cfg = client_config(config);
        let layout = cfg.layout().map_err(fail)?;
        let region = Arc::new(RegionStore::new(layout.region_bytes(), layout.slot_bytes()).map_err(fail)?);
        let transport = SimTransport::new(region, profile(config.profile)?, BatchMode::PerPath);
        let client = OneSidedOram::init(cfg, transport).map_err(fail)?;
        *out = Box::into_raw(Box::new(OsoramHandle { client }));
        Ok(())
    })
}

/// # Safety
/// `handle` must be null or a pointer from `osoram_new` not yet freed.
#[no_mangle]
pub unsafe extern "C" fn osoram_free(handle: *mut OsoramHandle) {
    if !handle.is_null() {
        drop(unsafe { Box::from_raw(handle) });
    }
}

/// Stores `len` bytes under `key`; `len` may not exceed the configured
/// value size.
///
/// # Safety
/// `handle` must be live; `value` must point to `len` readable bytes
/// (it may be null when `len` is 0).
#[no_mangle]
pub unsafe extern "C" fn osoram_put(handle: *mut OsoramHandle, key: u64, value: *const u8, len: usize) -> i32 {
    guard(|| {
        let h = unsafe { handle.as_mut() }.ok_or_else(|| null("handle"))?;
        let bytes = if len == 0 {
            &[][..]
        } else if value.is_null() {
            return Err(null("value"));
        } else {
            unsafe { std::slice::from_raw_parts(value, len) }
        };
        h.client.put(key, bytes).map_err(fail)
    })
}

#[derive(Clone, Copy)]
enum GetKind {
    Mixed,
    Oram,
    OneSided,
}

unsafe fn get_into(
    handle: *mut OsoramHandle,
    key: u64,
    kind: GetKind,
    buf: *mut u8,
    cap: usize,
    out_len: *mut usize,
    out_found: *mut bool,
) -> i32 {
    guard(|| {
        let h = unsafe { handle.as_mut() }.ok_or_else(|| null("handle"))?;
        let out_len = unsafe { out_len.as_mut() }.ok_or_else(|| null("out_len"))?;
        let out_found = unsafe { out_found.as_mut() }.ok_or_else(|| null("out_found"))?;
        let value = match kind {
            GetKind::Mixed => h.client.get(key),
            GetKind::Oram => h.client.oram_get(key),
            GetKind::OneSided => h.client.one_sided_get(key),
        }
        .map_err(fail)?;
        *out_found = value.is_some();
        let v = value.unwrap_or_default();
        *out_len = v.len();
        if v.len() > cap {
            return Err((OSORAM_ERR_BUFFER_TOO_SMALL, format!("value of {} bytes, buffer holds {cap}", v.len())));
        }
        if !v.is_empty() {
            if buf.is_null() {
                return Err(null("buf"));
            }
            unsafe { ptr::copy_nonoverlapping(v.as_ptr(), buf, v.len()) };
        }
        Ok(())
    })
}

/// Reads `key`, routed by the configured mix. Sets `*out_found`, and the
/// value length in `*out_len` even when `cap` is too small.
///
/// # Safety
/// `handle` must be live; `buf` must have `cap` writable bytes; `out_len`
/// and `out_found` must be writable.
#[no_mangle]
pub unsafe extern "C" fn osoram_get(
    handle: *mut OsoramHandle,
    key: u64,
    buf: *mut u8,
    cap: usize,
    out_len: *mut usize,
    out_found: *mut bool,
) -> i32 {
    unsafe { get_into(handle, key, GetKind::Mixed, buf, cap, out_len, out_found) }
}

/// As `osoram_get`, always through the full ORAM protocol.
///
/// # Safety
/// As for `osoram_get`.
#[no_mangle]
pub unsafe extern "C" fn osoram_oram_get(
    handle: *mut OsoramHandle,
    key: u64,
    buf: *mut u8,
    cap: usize,
    out_len: *mut usize,
    out_found: *mut bool,
) -> i32 {
    unsafe { get_into(handle, key, GetKind::Oram, buf, cap, out_len, out_found) }
}

/// As `osoram_get`, always by a single one-sided read.
///
/// # Safety
/// As for `osoram_get`.
#[no_mangle]
pub unsafe extern "C" fn osoram_one_sided_get(
    handle: *mut OsoramHandle,
    key: u64,
    buf: *mut u8,
    cap: usize,
    out_len: *mut usize,
    out_found: *mut bool,
) -> i32 {
    unsafe { get_into(handle, key, GetKind::OneSided, buf, cap, out_len, out_found) }
}

/// # Safety
/// `handle` must be live; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn osoram_metrics(handle: *const OsoramHandle, out: *mut OsoramMetrics) -> i32 {
    guard(|| {
        let h = unsafe { handle.as_ref() }.ok_or_else(|| null("handle"))?;
        let out = unsafe { out.as_mut() }.ok_or_else(|| null("out"))?;
        let m = h.client.metrics();
        *out = OsoramMetrics {
            puts: m.puts,
            oram_reads: m.oram_reads,
            one_sided_reads: m.one_sided_reads,
            stash_reads: m.stash_reads,
            absent_reads: m.absent_reads,
            max_stash: m.max_stash as u64,
            verbs: m.transport.verbs(),
            bytes: m.transport.bytes(),
            virtual_time_us: onesided_oram::Transport::virtual_time_us(h.client.transport()),
        };
        Ok(())
    })
}

/// Analytic per-read cost at `x_percent` ORAM reads for the tree that
/// `config` describes.
///
/// # Safety
/// `config` must point to a valid `OsoramConfig`; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn osoram_cost_model(config: *const OsoramConfig, x_percent: f64, out: *mut OsoramCost) -> i32 {
    guard(|| {
        let config = unsafe { config.as_ref() }.ok_or_else(|| null("config"))?;
        let out = unsafe { out.as_mut() }.ok_or_else(|| null("out"))?;
        if !(0.0..=100.0).contains(&x_percent) {
            return Err((OSORAM_ERR_ARGUMENT, format!("x_percent {x_percent} outside [0, 100]")));
        }
        let layout = TreeLayout::new(config.block_count, config.bucket_capacity as usize, slot_bytes_for(config.value_bytes as usize))
            .map_err(fail)?;
        let p = cost_model_with(x_percent, &layout, &profile(config.profile)?, BatchMode::PerPath, ReadMode::Slot);
        *out = OsoramCost {
            oram_access_us: p.oram_access_us,
            one_sided_us: p.one_sided_us,
            mean_read_us: p.mean_read_us,
            speedup: p.speedup,
        };
        Ok(())
    })
}
