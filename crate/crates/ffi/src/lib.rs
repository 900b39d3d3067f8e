//! C ABI for the embedding engine. Handles are opaque pointers owned by the
//! library; every fallible call returns a status code and stores a
//! human-readable message retrievable with `hinembed_last_error`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;
use std::ptr;

use hinembed::config::RunConfig;
use hinembed::graph::{load_hin, save_hin, Hin};
use hinembed::store::{load_store, save_store, EmbeddingStore};
use hinembed::trainer;
use hinembed::Error;

/// Status codes returned by every fallible function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HinembedStatus {
    Ok = 0,
    /// Runtime failure (I/O, numerics, shape mismatch).
    RuntimeError = 1,
    /// Configuration or ingestion error.
    ConfigError = 2,
    /// A required pointer argument was null.
    NullPointer = 3,
    /// A string argument was not valid UTF-8.
    InvalidUtf8 = 4,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let msg = CString::new(msg.replace('\0', "?")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn status_of(err: &Error) -> HinembedStatus {
    match err.exit_code() {
        2 => HinembedStatus::ConfigError,
        _ => HinembedStatus::RuntimeError,
    }
}

fn fail(err: Error) -> HinembedStatus {
    set_error(&err.to_string());
    status_of(&err)
}

/// Opaque graph handle.
pub struct HinembedHin {
    inner: Hin,
}

/// Opaque embedding-store handle.
pub struct HinembedStore {
    inner: EmbeddingStore,
}

unsafe fn path_arg<'a>(p: *const c_char) -> Result<&'a Path, HinembedStatus> {
    if p.is_null() {
        set_error("null path");
        return Err(HinembedStatus::NullPointer);
    }
    match CStr::from_ptr(p).to_str() {
        Ok(s) => Ok(Path::new(s)),
        Err(_) => {
            set_error("path is not valid UTF-8");
            Err(HinembedStatus::InvalidUtf8)
        }
    }
}

/// Message for the most recent error on this thread. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn hinembed_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn hinembed_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Load a binary graph file into a new handle.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn hinembed_hin_load(
    path: *const c_char,
    out: *mut *mut HinembedHin,
) -> HinembedStatus {
    if out.is_null() {
        set_error("null output pointer");
        return HinembedStatus::NullPointer;
    }
    *out = ptr::null_mut();
    let path = match path_arg(path) {
        Ok(p) => p,
        Err(s) => return s,
    };
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) => return fail(Error::io(path, e)),
    };
    match load_hin(&mut BufReader::new(file)) {
        Ok(hin) => {
            *out = Box::into_raw(Box::new(HinembedHin { inner: hin }));
            HinembedStatus::Ok
        }
        Err(e) => fail(e),
    }
}

/// Ingest the dataset described by a run-config TOML string.
///
/// # Safety
/// `config_toml` must be NUL-terminated; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn hinembed_hin_ingest(
    config_toml: *const c_char,
    out: *mut *mut HinembedHin,
) -> HinembedStatus {
    if out.is_null() || config_toml.is_null() {
        set_error("null pointer argument");
        return HinembedStatus::NullPointer;
    }
    *out = ptr::null_mut();
    let text = match CStr::from_ptr(config_toml).to_str() {
        Ok(s) => s,
        Err(_) => {
            set_error("config is not valid UTF-8");
            return HinembedStatus::InvalidUtf8;
        }
    };
    let cfg = match RunConfig::from_toml_str(text) {
        Ok(c) => c,
        Err(e) => return fail(e),
    };
    match hinembed::cli::ingest(&cfg) {
        Ok(hin) => {
            *out = Box::into_raw(Box::new(HinembedHin { inner: hin }));
            HinembedStatus::Ok
        }
        Err(e) => fail(e),
    }
}

/// Write a graph handle back to a binary file.
///
/// # Safety
/// `hin` must come from this library; `path` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn hinembed_hin_save(
    hin: *const HinembedHin,
    path: *const c_char,
) -> HinembedStatus {
    let Some(hin) = hin.as_ref() else {
        set_error("null graph handle");
        return HinembedStatus::NullPointer;
    };
    let path = match path_arg(path) {
        Ok(p) => p,
        Err(s) => return s,
    };
    let file = match File::create(path) {
        Ok(f) => f,
        Err(e) => return fail(Error::io(path, e)),
    };
    let mut w = BufWriter::new(file);
    match save_hin(&hin.inner, &mut w) {
        Ok(()) => HinembedStatus::Ok,
        Err(e) => fail(e),
    }
}

/// Number of entities in the global vocabulary; 0 for a null handle.
///
/// # Safety
/// `hin` must be null or a live handle from this library.
#[no_mangle]
pub unsafe extern "C" fn hinembed_hin_num_entities(hin: *const HinembedHin) -> u64 {
    hin.as_ref().map_or(0, |h| h.inner.vocab.num_entities() as u64)
}

/// Number of relation types; 0 for a null handle.
///
/// # Safety
/// `hin` must be null or a live handle from this library.
#[no_mangle]
pub unsafe extern "C" fn hinembed_hin_num_relations(hin: *const HinembedHin) -> u64 {
    hin.as_ref().map_or(0, |h| h.inner.vocab.num_relations() as u64)
}

/// Number of subgraph sources; 0 for a null handle.
///
/// # Safety
/// `hin` must be null or a live handle from this library.
#[no_mangle]
pub unsafe extern "C" fn hinembed_hin_num_sources(hin: *const HinembedHin) -> u64 {
    hin.as_ref().map_or(0, |h| h.inner.num_sources() as u64)
}

/// Total edge count across sources; 0 for a null handle.
///
/// # Safety
/// `hin` must be null or a live handle from this library.
#[no_mangle]
pub unsafe extern "C" fn hinembed_hin_num_edges(hin: *const HinembedHin) -> u64 {
    hin.as_ref().map_or(0, |h| h.inner.total_edges() as u64)
}

/// Free a graph handle. Null is a no-op.
///
/// # Safety
/// `hin` must be null or an unfreed handle from this library.
#[no_mangle]
pub unsafe extern "C" fn hinembed_hin_free(hin: *mut HinembedHin) {
    if !hin.is_null() {
        drop(Box::from_raw(hin));
    }
}

/// Train embeddings on a graph using a run-config TOML string (the first
/// lambda value if a grid is given).
///
/// # Safety
/// All pointers must be valid; `config_toml` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn hinembed_train(
    hin: *const HinembedHin,
    config_toml: *const c_char,
    out: *mut *mut HinembedStore,
) -> HinembedStatus {
    if out.is_null() || config_toml.is_null() {
        set_error("null pointer argument");
        return HinembedStatus::NullPointer;
    }
    *out = ptr::null_mut();
    let Some(hin) = hin.as_ref() else {
        set_error("null graph handle");
        return HinembedStatus::NullPointer;
    };
    let text = match CStr::from_ptr(config_toml).to_str() {
        Ok(s) => s,
        Err(_) => {
            set_error("config is not valid UTF-8");
            return HinembedStatus::InvalidUtf8;
        }
    };
    let cfg = match RunConfig::from_toml_str(text) {
        Ok(c) => c,
        Err(e) => return fail(e),
    };
    let train_cfg = match cfg
        .alignment
        .lambda
        .values()
        .and_then(|ls| cfg.train_config(ls[0]))
    {
        Ok(c) => c,
        Err(e) => return fail(e),
    };
    match trainer::train(&hin.inner, &train_cfg) {
        Ok(output) => {
            *out = Box::into_raw(Box::new(HinembedStore { inner: output.store }));
            HinembedStatus::Ok
        }
        Err(e) => fail(e),
    }
}

/// Load an embedding store from its binary file.
///
/// # Safety
/// `path` must be NUL-terminated; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn hinembed_store_load(
    path: *const c_char,
    out: *mut *mut HinembedStore,
) -> HinembedStatus {
    if out.is_null() {
        set_error("null output pointer");
        return HinembedStatus::NullPointer;
    }
    *out = ptr::null_mut();
    let path = match path_arg(path) {
        Ok(p) => p,
        Err(s) => return s,
    };
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) => return fail(Error::io(path, e)),
    };
    match load_store(&mut BufReader::new(file)) {
        Ok(store) => {
            *out = Box::into_raw(Box::new(HinembedStore { inner: store }));
            HinembedStatus::Ok
        }
        Err(e) => fail(e),
    }
}

/// Write an embedding store to a binary file.
///
/// # Safety
/// `store` must come from this library; `path` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn hinembed_store_save(
    store: *const HinembedStore,
    path: *const c_char,
) -> HinembedStatus {
    let Some(store) = store.as_ref() else {
        set_error("null store handle");
        return HinembedStatus::NullPointer;
    };
    let path = match path_arg(path) {
        Ok(p) => p,
        Err(s) => return s,
    };
    let file = match File::create(path) {
        Ok(f) => f,
        Err(e) => return fail(Error::io(path, e)),
    };
    let mut w = BufWriter::new(file);
    match save_store(&store.inner, &mut w) {
        Ok(()) => HinembedStatus::Ok,
        Err(e) => fail(e),
    }
}

/// Embedding dimension d; 0 for a null handle.
///
/// # Safety
/// `store` must be null or a live handle from this library.
#[no_mangle]
pub unsafe extern "C" fn hinembed_store_dim(store: *const HinembedStore) -> u64 {
    store.as_ref().map_or(0, |s| s.inner.dim as u64)
}

/// Number of entity rows; 0 for a null handle.
///
/// # Safety
/// `store` must be null or a live handle from this library.
#[no_mangle]
pub unsafe extern "C" fn hinembed_store_num_entities(store: *const HinembedStore) -> u64 {
    store.as_ref().map_or(0, |s| s.inner.entity.rows as u64)
}

/// Copy one entity's embedding into `buf` (capacity `buf_len` doubles).
///
/// # Safety
/// `buf` must point to at least `buf_len` writable f64 slots.
#[no_mangle]
pub unsafe extern "C" fn hinembed_store_entity_row(
    store: *const HinembedStore,
    entity_id: u64,
    buf: *mut f64,
    buf_len: u64,
) -> HinembedStatus {
    let Some(store) = store.as_ref() else {
        set_error("null store handle");
        return HinembedStatus::NullPointer;
    };
    if buf.is_null() {
        set_error("null buffer");
        return HinembedStatus::NullPointer;
    }
    if entity_id as usize >= store.inner.entity.rows {
        set_error("entity id out of range");
        return HinembedStatus::RuntimeError;
    }
    if (buf_len as usize) < store.inner.dim {
        set_error("buffer too small");
        return HinembedStatus::RuntimeError;
    }
    let row = store.inner.entity.row(entity_id as usize);
    ptr::copy_nonoverlapping(row.as_ptr(), buf, store.inner.dim);
    HinembedStatus::Ok
}

/// Free a store handle. Null is a no-op.
///
/// # Safety
/// `store` must be null or an unfreed handle from this library.
#[no_mangle]
pub unsafe extern "C" fn hinembed_store_free(store: *mut HinembedStore) {
    if !store.is_null() {
        drop(Box::from_raw(store));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::ffi::CString;

    fn c(s: &str) -> CString {
        CString::new(s).unwrap()
    }

    const CONFIG: &str = r#"
[dataset]
sources = { a = "A.tsv", b = "B.tsv" }

[model]
kind = "distmult"
dim = 4

[sampler]
batch_size = 8

[train]
epochs = 2
seed = 1
"#;

    fn write_dataset(dir: &std::path::Path) -> String {
        let a = dir.join("A.tsv");
        let b = dir.join("B.tsv");
        std::fs::write(&a, "x\tr\ty\ny\tr\tz\nz\tr\tx\n").unwrap();
        std::fs::write(&b, "y\ts\tw\nw\ts\tz\n").unwrap();
        CONFIG
            .replace("A.tsv", &a.display().to_string())
            .replace("B.tsv", &b.display().to_string())
    }

    #[test]
    fn ingest_train_save_load_roundtrip() {
        let dir = std::env::temp_dir().join(format!("hinffi-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let cfg = c(&write_dataset(&dir));
        unsafe {
            let mut hin: *mut HinembedHin = ptr::null_mut();
            assert_eq!(hinembed_hin_ingest(cfg.as_ptr(), &mut hin), HinembedStatus::Ok);
            assert_eq!(hinembed_hin_num_entities(hin), 4);
            assert_eq!(hinembed_hin_num_relations(hin), 2);
            assert_eq!(hinembed_hin_num_sources(hin), 2);
            assert_eq!(hinembed_hin_num_edges(hin), 5);

            let mut store: *mut HinembedStore = ptr::null_mut();
            assert_eq!(hinembed_train(hin, cfg.as_ptr(), &mut store), HinembedStatus::Ok);
            assert_eq!(hinembed_store_dim(store), 4);
            assert_eq!(hinembed_store_num_entities(store), 4);
            let mut buf = [0.0f64; 4];
            assert_eq!(
                hinembed_store_entity_row(store, 0, buf.as_mut_ptr(), 4),
                HinembedStatus::Ok
            );
            assert!(buf.iter().any(|&v| v != 0.0));

            let emb_path = c(dir.join("t.emb").to_str().unwrap());
            assert_eq!(hinembed_store_save(store, emb_path.as_ptr()), HinembedStatus::Ok);
            let mut reloaded: *mut HinembedStore = ptr::null_mut();
            assert_eq!(
                hinembed_store_load(emb_path.as_ptr(), &mut reloaded),
                HinembedStatus::Ok
            );
            let mut buf2 = [0.0f64; 4];
            assert_eq!(
                hinembed_store_entity_row(reloaded, 0, buf2.as_mut_ptr(), 4),
                HinembedStatus::Ok
            );
            assert_eq!(buf, buf2);

            hinembed_store_free(store);
            hinembed_store_free(reloaded);
            hinembed_hin_free(hin);
        }
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn errors_set_status_and_message() {
        unsafe {
            let mut hin: *mut HinembedHin = ptr::null_mut();
            let missing = c("/nonexistent/path.bin");
            let status = hinembed_hin_load(missing.as_ptr(), &mut hin);
            assert_eq!(status, HinembedStatus::ConfigError);
            assert!(hin.is_null());
            let msg = CStr::from_ptr(hinembed_last_error()).to_str().unwrap();
            assert!(msg.contains("path.bin"), "message was {msg:?}");

            let bad_cfg = c("not toml at all ][");
            let status = hinembed_hin_ingest(bad_cfg.as_ptr(), &mut hin);
            assert_eq!(status, HinembedStatus::ConfigError);

            assert_eq!(
                hinembed_hin_save(ptr::null(), missing.as_ptr()),
                HinembedStatus::NullPointer
            );
            assert_eq!(hinembed_store_dim(ptr::null()), 0);
            // free of null is a no-op
            hinembed_hin_free(ptr::null_mut());
        }
    }

    #[test]
    fn buffer_too_small_is_reported() {
        let dir = std::env::temp_dir().join(format!("hinffi-buf-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let cfg = c(&write_dataset(&dir));
        unsafe {
            let mut hin: *mut HinembedHin = ptr::null_mut();
            assert_eq!(hinembed_hin_ingest(cfg.as_ptr(), &mut hin), HinembedStatus::Ok);
            let mut store: *mut HinembedStore = ptr::null_mut();
            assert_eq!(hinembed_train(hin, cfg.as_ptr(), &mut store), HinembedStatus::Ok);
            let mut buf = [0.0f64; 2];
            assert_eq!(
                hinembed_store_entity_row(store, 0, buf.as_mut_ptr(), 2),
                HinembedStatus::RuntimeError
            );
            assert_eq!(
                hinembed_store_entity_row(store, 99, buf.as_mut_ptr(), 2),
                HinembedStatus::RuntimeError
            );
            hinembed_store_free(store);
            hinembed_hin_free(hin);
        }
        std::fs::remove_dir_all(&dir).ok();
    }
}
