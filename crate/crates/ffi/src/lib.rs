//! C ABI for molpeco.
//!
//! Datasets and models are opaque handles created by `mp_*_open`/`mp_*_load`
//! and released with the matching `mp_*_free`. Every fallible call returns an
//! [`MpStatus`]; on failure a message is kept per thread and can be read with
//! [`mp_last_error`]. Output arrays are caller-allocated: pass the buffer and
//! its length, and query sizes first with the `*_len`/`*_dim` functions.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use molpeco::chemio::{parse_jsonl, parse_molecules, Atom, Dataset, Molecule, ParseOptions};
use molpeco::cli::{load_trained, Trained};
use molpeco::model::featurize;
use molpeco::repr::coulomb_matrix;
use molpeco::Error;

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MpStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    /// An index or buffer length is out of range.
    InvalidArgument = 3,
    /// Malformed input molecules or datasets.
    Data = 4,
    Config = 5,
    Numeric = 6,
    /// Corrupt or incompatible checkpoint.
    Format = 7,
    Io = 8,
    Panic = 9,
}

/// A parsed set of molecules.
pub struct MpDataset {
    inner: Dataset,
}

/// A trained model restored from a checkpoint.
pub struct MpModel {
    trained: Trained,
    names: Vec<CString>,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(err: &Error) -> MpStatus {
    match err {
        Error::Parse { .. } | Error::Molecule { .. } | Error::Data(_) | Error::Shape(_) | Error::Csv(_) => {
            MpStatus::Data
        }
        Error::Config(_) => MpStatus::Config,
        Error::Numeric(_) => MpStatus::Numeric,
        Error::Format(_) | Error::Json(_) => MpStatus::Format,
        Error::Io(_) => MpStatus::Io,
    }
}

fn fail(status: MpStatus, msg: impl Into<String>) -> MpStatus {
    set_error(msg.into());
    status
}

/// Runs `f`, recording any error or panic as the thread's last error.
fn guard(f: impl FnOnce() -> Result<(), MpStatus>) -> MpStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => MpStatus::Ok,
        Ok(Err(s)) => s,
        Err(_) => fail(MpStatus::Panic, "internal panic"),
    }
}

fn lib(err: Error) -> MpStatus {
    fail(status_of(&err), err.to_string())
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, MpStatus> {
    if p.is_null() {
        return Err(fail(MpStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(p).to_str().map_err(|_| fail(MpStatus::InvalidUtf8, format!("{what} is not valid UTF-8")))
}

unsafe fn ref_arg<'a, T>(p: *const T, what: &str) -> Result<&'a T, MpStatus> {
    p.as_ref().ok_or_else(|| fail(MpStatus::NullPointer, format!("{what} is null")))
}

unsafe fn out_slice<'a>(p: *mut f64, len: usize, need: usize) -> Result<&'a mut [f64], MpStatus> {
    if p.is_null() {
        return Err(fail(MpStatus::NullPointer, "output buffer is null"));
    }
    if len < need {
        return Err(fail(MpStatus::InvalidArgument, format!("output buffer holds {len} values, {need} needed")));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

fn store<T>(out: *mut *mut T, value: T) -> Result<(), MpStatus> {
    if out.is_null() {
        return Err(fail(MpStatus::NullPointer, "output handle is null"));
    }
    unsafe { *out = Box::into_raw(Box::new(value)) };
    Ok(())
}

/// Message for the last failed call on this thread, or null. Valid until the
/// next call into the library from the same thread.
#[no_mangle]
pub extern "C" fn mp_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn mp_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Coulomb matrix of `n` atoms, written row-major into `out` (`n * n` values).
///
/// `atomic_numbers` holds `n` values and `positions` holds `3 * n` coordinates
/// in Ångström.
///
/// # Safety
/// Pointers must be valid for the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn mp_coulomb_matrix(
    atomic_numbers: *const u32,
    positions: *const f64,
    n: usize,
    out: *mut f64,
    out_len: usize,
) -> MpStatus {
    guard(|| {
        if atomic_numbers.is_null() || positions.is_null() {
            return Err(fail(MpStatus::NullPointer, "atom arrays are null"));
        }
        let need = n.checked_mul(n).ok_or_else(|| fail(MpStatus::InvalidArgument, "atom count overflows"))?;
        let out = out_slice(out, out_len, need)?;
        let z = std::slice::from_raw_parts(atomic_numbers, n);
        let r = std::slice::from_raw_parts(positions, 3 * n);
        let mol = Molecule {
            id: "ffi".into(),
            atoms: (0..n)
                .map(|i| Atom { atomic_number: z[i], position: [r[3 * i], r[3 * i + 1], r[3 * i + 2]] })
                .collect(),
            bonds: None,
            labels: Default::default(),
        };
        mol.validate(usize::MAX).map_err(lib)?;
        let c = coulomb_matrix(&mol).map_err(lib)?;
        out[..need].copy_from_slice(c.as_slice());
        Ok(())
    })
}

/// Parses a JSONL molecule file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mp_dataset_open(path: *const c_char, out: *mut *mut MpDataset) -> MpStatus {
    guard(|| {
        let path = str_arg(path, "path")?;
        let inner = parse_molecules(path, &ParseOptions::default()).map_err(lib)?;
        store(out, MpDataset { inner })
    })
}

/// Parses JSONL text held in memory.
///
/// # Safety
/// `text` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mp_dataset_parse(text: *const c_char, out: *mut *mut MpDataset) -> MpStatus {
    guard(|| {
        let text = str_arg(text, "text")?;
        let inner = parse_jsonl(text, &ParseOptions::default()).map_err(lib)?;
        store(out, MpDataset { inner })
    })
}

/// Number of molecules; 0 for a null handle.
///
/// # Safety
/// `ds` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn mp_dataset_len(ds: *const MpDataset) -> usize {
    ds.as_ref().map_or(0, |d| d.inner.len())
}

/// Number of atoms in molecule `index`; 0 when out of range.
///
/// # Safety
/// `ds` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn mp_dataset_atom_count(ds: *const MpDataset, index: usize) -> usize {
    ds.as_ref().and_then(|d| d.inner.molecules().get(index)).map_or(0, |m| m.atoms.len())
}

/// # Safety
/// `ds` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn mp_dataset_free(ds: *mut MpDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

/// Restores a model from a checkpoint written by `molpeco train`.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mp_model_load(path: *const c_char, out: *mut *mut MpModel) -> MpStatus {
    guard(|| {
        let path = str_arg(path, "path")?;
        let trained = load_trained(Path::new(path)).map_err(lib)?;
        let names = trained
            .descriptors
            .iter()
            .map(|d| CString::new(d.as_str()).map_err(|_| fail(MpStatus::Format, "descriptor name contains NUL")))
            .collect::<Result<_, _>>()?;
        store(out, MpModel { trained, names })
    })
}

/// Number of descriptors the model scores; 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn mp_model_num_descriptors(model: *const MpModel) -> usize {
    model.as_ref().map_or(0, |m| m.names.len())
}

/// Length of the pooled molecule embedding; 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn mp_model_embedding_dim(model: *const MpModel) -> usize {
    model.as_ref().map_or(0, |m| m.trained.model.config().d)
}

/// Name of descriptor `index`, owned by the model; null when out of range.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn mp_model_descriptor_name(model: *const MpModel, index: usize) -> *const c_char {
    model.as_ref().and_then(|m| m.names.get(index)).map_or(ptr::null(), |c| c.as_ptr())
}

unsafe fn run_model(
    model: *const MpModel,
    ds: *const MpDataset,
    index: usize,
    out: *mut f64,
    out_len: usize,
    embedding: bool,
) -> MpStatus {
    guard(|| {
        let model = ref_arg(model, "model")?;
        let ds = ref_arg(ds, "dataset")?;
        let mol = ds.inner.molecules().get(index).ok_or_else(|| {
            fail(
                MpStatus::InvalidArgument,
                format!("molecule index {index} out of range ({} molecules)", ds.inner.len()),
            )
        })?;
        let net = &model.trained.model;
        let need = if embedding { net.config().d } else { net.config().o };
        let out = out_slice(out, out_len, need)?;
        let feat = featurize(mol, net.config()).map_err(lib)?;
        let (probs, emb) = net.predict(&feat).map_err(lib)?;
        out[..need].copy_from_slice(if embedding { &emb } else { &probs });
        Ok(())
    })
}

/// Descriptor probabilities for molecule `index`, one per descriptor.
///
/// # Safety
/// Handles must be live and `out` valid for `out_len` values.
#[no_mangle]
pub unsafe extern "C" fn mp_model_predict(
    model: *const MpModel,
    ds: *const MpDataset,
    index: usize,
    out: *mut f64,
    out_len: usize,
) -> MpStatus {
    run_model(model, ds, index, out, out_len, false)
}

/// Pooled embedding of molecule `index`.
///
/// # Safety
/// Handles must be live and `out` valid for `out_len` values.
#[no_mangle]
pub unsafe extern "C" fn mp_model_embed(
    model: *const MpModel,
    ds: *const MpDataset,
    index: usize,
    out: *mut f64,
    out_len: usize,
) -> MpStatus {
    run_model(model, ds, index, out, out_len, true)
}

/// # Safety
/// `model` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn mp_model_free(model: *mut MpModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}
