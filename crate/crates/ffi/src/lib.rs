//! C ABI over [`doblix::engine::Db`].
//!
//! Every call returns a [`DoblixStatus`]. On failure a message is available
//! from [`doblix_last_error`] on the same thread. Buffers handed out by the
//! library are released with [`doblix_free_buf`] or [`doblix_free_string`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use doblix::engine::{Db, Options};
use doblix::{ErrorKind, StoreError};

/// Opaque store handle.
pub struct DoblixDb {
    db: Db,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DoblixStatus {
    Ok = 0,
    NotFound = 1,
    CorruptSstable = 2,
    ModelDeserializeFailure = 3,
    IoFailure = 4,
    ConfigInvalid = 5,
    /// Null pointer or non-UTF-8 path.
    InvalidArgument = 6,
    /// A Rust panic was caught at the boundary.
    Internal = 7,
}

#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct DoblixOptions {
    pub memtable_bytes: usize,
    /// Run flushes and compactions on a worker thread.
    pub background: bool,
    /// Let the tuning agent pick the index configuration of new tables.
    pub enable_agent: bool,
    pub sync_wal: bool,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = CString::new(msg.into().replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(msg));
}

fn status_of(e: &StoreError) -> DoblixStatus {
    match e.kind() {
        ErrorKind::KeyNotFound => DoblixStatus::NotFound,
        ErrorKind::CorruptSSTable => DoblixStatus::CorruptSstable,
        ErrorKind::ModelDeserializeFailure => DoblixStatus::ModelDeserializeFailure,
        ErrorKind::IoFailure => DoblixStatus::IoFailure,
        ErrorKind::ConfigInvalid => DoblixStatus::ConfigInvalid,
    }
}

fn guard(f: impl FnOnce() -> Result<(), DoblixStatus>) -> DoblixStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => DoblixStatus::Ok,
        Ok(Err(s)) => s,
        Err(_) => {
            set_error("panic inside doblix");
            DoblixStatus::Internal
        }
    }
}

fn fail(e: StoreError) -> DoblixStatus {
    set_error(e.to_string());
    status_of(&e)
}

fn invalid(what: &str) -> DoblixStatus {
    set_error(what);
    DoblixStatus::InvalidArgument
}

unsafe fn path_arg<'a>(p: *const c_char) -> Result<&'a Path, DoblixStatus> {
    if p.is_null() {
        return Err(invalid("path is null"));
    }
    CStr::from_ptr(p).to_str().map(Path::new).map_err(|_| invalid("path is not UTF-8"))
}

unsafe fn bytes_arg<'a>(p: *const u8, len: usize) -> Result<&'a [u8], DoblixStatus> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(invalid("buffer is null"));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn db_arg<'a>(db: *const DoblixDb) -> Result<&'a Db, DoblixStatus> {
    db.as_ref().map(|d| &d.db).ok_or_else(|| invalid("handle is null"))
}

#[no_mangle]
pub extern "C" fn doblix_options_default() -> DoblixOptions {
    let d = Options::new("");
    DoblixOptions {
        memtable_bytes: d.memtable_bytes,
        background: d.background,
        enable_agent: d.agent.is_some(),
        sync_wal: d.sync_wal,
    }
}

/// Opens (or creates) the store in `dir`. `options` may be null for defaults.
///
/// # Safety
/// `dir` is a NUL-terminated string; `options` is null or valid; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn doblix_open(dir: *const c_char, options: *const DoblixOptions, out: *mut *mut DoblixDb) -> DoblixStatus {
    guard(|| {
        if out.is_null() {
            return Err(invalid("out is null"));
        }
        *out = ptr::null_mut();
        let o = options.as_ref().copied().unwrap_or_else(|| doblix_options_default());
        let mut opts = Options::new(path_arg(dir)?);
        opts.memtable_bytes = o.memtable_bytes;
        opts.background = o.background;
        opts.sync_wal = o.sync_wal;
        if !o.enable_agent {
            opts.agent = None;
        }
        let db = Db::open(opts).map_err(fail)?;
        *out = Box::into_raw(Box::new(DoblixDb { db }));
        Ok(())
    })
}

/// Flushes background work and releases the handle. Null is a no-op.
///
/// # Safety
/// `db` came from [`doblix_open`] and is not used afterwards.
#[no_mangle]
pub unsafe extern "C" fn doblix_close(db: *mut DoblixDb) {
    if !db.is_null() {
        let _ = catch_unwind(AssertUnwindSafe(|| drop(Box::from_raw(db))));
    }
}

/// # Safety
/// `db` is a live handle; `key`/`value` point to `key_len`/`value_len` readable bytes.
#[no_mangle]
pub unsafe extern "C" fn doblix_put(
    db: *const DoblixDb,
    key: *const u8,
    key_len: usize,
    value: *const u8,
    value_len: usize,
) -> DoblixStatus {
    guard(|| {
        let db = db_arg(db)?;
        db.put(bytes_arg(key, key_len)?, bytes_arg(value, value_len)?).map_err(fail)
    })
}

/// On `DOBLIX_STATUS_OK` stores a fresh buffer in `*value`/`*value_len`;
/// release it with [`doblix_free_buf`]. A missing key yields
/// `DOBLIX_STATUS_NOT_FOUND`.
///
/// # Safety
/// `db` is a live handle; `key` points to `key_len` bytes; `value` and `value_len` are writable.
#[no_mangle]
pub unsafe extern "C" fn doblix_get(
    db: *const DoblixDb,
    key: *const u8,
    key_len: usize,
    value: *mut *mut u8,
    value_len: *mut usize,
) -> DoblixStatus {
    guard(|| {
        if value.is_null() || value_len.is_null() {
            return Err(invalid("output pointer is null"));
        }
        *value = ptr::null_mut();
        *value_len = 0;
        let db = db_arg(db)?;
        let v = db.get(bytes_arg(key, key_len)?).map_err(fail)?;
        let boxed = v.into_boxed_slice();
        *value_len = boxed.len();
        *value = Box::into_raw(boxed) as *mut u8;
        Ok(())
    })
}

/// # Safety
/// `db` is a live handle; `key` points to `key_len` readable bytes.
#[no_mangle]
pub unsafe extern "C" fn doblix_delete(db: *const DoblixDb, key: *const u8, key_len: usize) -> DoblixStatus {
    guard(|| db_arg(db)?.delete(bytes_arg(key, key_len)?).map_err(fail))
}

/// Persists everything written so far into tables.
///
/// # Safety
/// `db` is a live handle.
#[no_mangle]
pub unsafe extern "C" fn doblix_flush(db: *const DoblixDb) -> DoblixStatus {
    guard(|| db_arg(db)?.flush().map_err(fail))
}

/// Writes the JSON description of an SSTable file to `*json`; release it
/// with [`doblix_free_string`].
///
/// # Safety
/// `path` is a NUL-terminated string; `json` is writable.
#[no_mangle]
pub unsafe extern "C" fn doblix_sst_inspect(path: *const c_char, json: *mut *mut c_char) -> DoblixStatus {
    guard(|| {
        if json.is_null() {
            return Err(invalid("json is null"));
        }
        *json = ptr::null_mut();
        let v = doblix::sstable::inspect(path_arg(path)?).map_err(fail)?;
        let s = serde_json::to_string(&v).map_err(|e| fail(e.into()))?;
        *json = CString::new(s).map_err(|_| invalid("JSON contains NUL"))?.into_raw();
        Ok(())
    })
}

/// # Safety
/// `buf`/`len` came from [`doblix_get`] and are not freed twice.
#[no_mangle]
pub unsafe extern "C" fn doblix_free_buf(buf: *mut u8, len: usize) {
    if !buf.is_null() {
        drop(Box::from_raw(ptr::slice_from_raw_parts_mut(buf, len)));
    }
}

/// # Safety
/// `s` came from this library and is not freed twice.
#[no_mangle]
pub unsafe extern "C" fn doblix_free_string(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Message of the last failed call on this thread, or null. Valid until the
/// next failing call on the same thread.
#[no_mangle]
pub extern "C" fn doblix_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}
