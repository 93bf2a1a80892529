//! C ABI for the retrank core: opaque handles, integer status codes, and a
//! generated `include/retrank.h` for binding from other languages.
//!
//! Conventions:
//! * Every fallible call returns an [`RrStatus`]; `Ok` is zero. On failure
//!   a thread-local message is available through [`rr_last_error_message`]
//!   until the next failing call on that thread.
//! * Handles (`RrDataset`, `RrModel`) are opaque; free them with the
//!   matching `*_free` function exactly once. Null handles are rejected,
//!   never dereferenced.
//! * Strings are NUL-terminated UTF-8.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use retrank::config::{KvConfig, RunMode};
use retrank::dataset::InteractionDataset;
use retrank::evaluation::EvalConfig;
use retrank::models::{ModelKind, ScorerParams};
use retrank::trainer::{train, train_independent, TrainTarget};

/// Status code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RrStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidArgument = 2,
    Utf8 = 3,
    Parse = 4,
    Data = 5,
    Numeric = 6,
    Io = 7,
    Internal = 8,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: String) {
    let c = CString::new(message.replace('\0', "?"))
        .unwrap_or_else(|_| CString::new("error").unwrap());
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(c));
}

fn status_of(err: &retrank::Error) -> RrStatus {
    use retrank::Error::*;
    match err {
        Parse { .. } => RrStatus::Parse,
        EmptyDataset { .. } => RrStatus::Data,
        Config(_) => RrStatus::InvalidArgument,
        NonFinite { .. } | NumericAbort { .. } => RrStatus::Numeric,
        Io(_) => RrStatus::Io,
        _ => RrStatus::Internal,
    }
}

fn fail(err: retrank::Error) -> RrStatus {
    let status = status_of(&err);
    set_error(err.to_string());
    status
}

/// Run a closure, translating panics into `RrStatus::Internal`.
fn guarded<F: FnOnce() -> RrStatus>(f: F) -> RrStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(status) => status,
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("internal panic: {msg}"));
            RrStatus::Internal
        }
    }
}

unsafe fn c_str<'a>(ptr: *const c_char) -> Result<&'a str, RrStatus> {
    if ptr.is_null() {
        set_error("null string argument".into());
        return Err(RrStatus::NullArgument);
    }
    CStr::from_ptr(ptr).to_str().map_err(|e| {
        set_error(format!("invalid UTF-8: {e}"));
        RrStatus::Utf8
    })
}

/// Opaque filtered interaction data.
pub struct RrDataset(InteractionDataset);

/// Opaque scorer parameters (retriever or ranker).
pub struct RrModel(ScorerParams);

/// Aggregate metrics of one evaluation: all three pipelines at one cutoff.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct RrMetrics {
    pub retriever_ndcg: f64,
    pub retriever_recall: f64,
    pub retriever_mrr: f64,
    pub ranker_ndcg: f64,
    pub ranker_recall: f64,
    pub ranker_mrr: f64,
    pub two_stage_ndcg: f64,
    pub two_stage_recall: f64,
    pub two_stage_mrr: f64,
    pub num_cases: usize,
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn rr_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Message of the most recent failure on this thread, or null if none.
/// The pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn rr_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| {
        slot.borrow()
            .as_ref()
            .map(|c| c.as_ptr())
            .unwrap_or(std::ptr::null())
    })
}

/// Ingest a tab-separated interaction log (`user<TAB>item<TAB>timestamp`
/// per line, `#` comments). On success `*out` owns the dataset.
///
/// # Safety
/// `path` must be a valid NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn rr_dataset_ingest(
    path: *const c_char,
    min_interactions: usize,
    max_seq_len: usize,
    out: *mut *mut RrDataset,
) -> RrStatus {
    guarded(|| {
        if out.is_null() {
            set_error("null output pointer".into());
            return RrStatus::NullArgument;
        }
        let path = match c_str(path) {
            Ok(s) => PathBuf::from(s),
            Err(status) => return status,
        };
        match retrank::dataset::ingest_with(&path, min_interactions, max_seq_len) {
            Ok(ds) => {
                *out = Box::into_raw(Box::new(RrDataset(ds)));
                RrStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// Generate a synthetic latent-factor dataset.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn rr_dataset_synthetic(
    num_users: usize,
    num_items: usize,
    latent_dim: usize,
    seq_len: usize,
    temperature: f64,
    curvature: f64,
    seed: u64,
    min_interactions: usize,
    max_seq_len: usize,
    out: *mut *mut RrDataset,
) -> RrStatus {
    guarded(|| {
        if out.is_null() {
            set_error("null output pointer".into());
            return RrStatus::NullArgument;
        }
        let cfg = retrank::dataset::SyntheticConfig {
            num_users,
            num_items,
            latent_dim,
            seq_len,
            temperature,
            curvature,
            seed,
            min_interactions,
            max_seq_len,
        };
        match retrank::dataset::synthesize(&cfg) {
            Ok(ds) => {
                *out = Box::into_raw(Box::new(RrDataset(ds)));
                RrStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// # Safety
/// `ds` must be a live handle from this library or null.
#[no_mangle]
pub unsafe extern "C" fn rr_dataset_num_users(ds: *const RrDataset) -> usize {
    if ds.is_null() {
        return 0;
    }
    (*ds).0.num_users()
}

/// # Safety
/// `ds` must be a live handle from this library or null.
#[no_mangle]
pub unsafe extern "C" fn rr_dataset_num_items(ds: *const RrDataset) -> usize {
    if ds.is_null() {
        return 0;
    }
    (*ds).0.num_items()
}

/// # Safety
/// `ds` must be a live handle from this library or null.
#[no_mangle]
pub unsafe extern "C" fn rr_dataset_num_interactions(ds: *const RrDataset) -> usize {
    if ds.is_null() {
        return 0;
    }
    (*ds).0.num_interactions()
}

/// # Safety
/// `ds` must be a handle returned by this library, freed at most once.
#[no_mangle]
pub unsafe extern "C" fn rr_dataset_free(ds: *mut RrDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

/// Train on a dataset. `config_text` holds the same flat `key = value`
/// lines the CLI accepts (trainer.*, sampler.*, strategy.*, eval.*, and a
/// seed list whose first entry is used); data-source keys are ignored
/// because the dataset handle wins. Pass null for an all-defaults
/// cooperative run. On success the two trained models are returned through
/// `out_retriever` / `out_ranker`.
///
/// # Safety
/// Pointers must be valid; `config_text` null or NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn rr_train(
    ds: *const RrDataset,
    config_text: *const c_char,
    out_retriever: *mut *mut RrModel,
    out_ranker: *mut *mut RrModel,
) -> RrStatus {
    guarded(|| {
        if ds.is_null() || out_retriever.is_null() || out_ranker.is_null() {
            set_error("null argument".into());
            return RrStatus::NullArgument;
        }
        let mut kv = KvConfig::default();
        if !config_text.is_null() {
            let text = match c_str(config_text) {
                Ok(s) => s,
                Err(status) => return status,
            };
            for (idx, line) in text.lines().enumerate() {
                let trimmed = line.trim();
                if trimmed.is_empty() || trimmed.starts_with('#') {
                    continue;
                }
                if let Err(e) = kv.set(trimmed) {
                    set_error(format!("config line {}: {e}", idx + 1));
                    return RrStatus::InvalidArgument;
                }
            }
        }
        let spec = match kv.into_spec() {
            Ok(s) => s,
            Err(e) => return fail(e),
        };
        let mut cfg = spec.train.clone();
        cfg.seed = spec.seeds[0];
        let dataset = &(*ds).0;
        let result = match spec.mode {
            RunMode::Cooperative => train(&cfg, &spec.eval, dataset),
            RunMode::IndependentBoth => {
                train_independent(&cfg, &spec.eval, dataset, TrainTarget::Both)
            }
            RunMode::IndependentRetriever => {
                train_independent(&cfg, &spec.eval, dataset, TrainTarget::Retriever)
            }
            RunMode::IndependentRanker => {
                train_independent(&cfg, &spec.eval, dataset, TrainTarget::Ranker)
            }
        };
        match result {
            Ok(out) => {
                *out_retriever = Box::into_raw(Box::new(RrModel(out.retriever)));
                *out_ranker = Box::into_raw(Box::new(RrModel(out.ranker)));
                RrStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// Model kind: 0 retriever, 1 ranker, -1 for null.
///
/// # Safety
/// `model` must be a live handle from this library or null.
#[no_mangle]
pub unsafe extern "C" fn rr_model_kind(model: *const RrModel) -> i32 {
    if model.is_null() {
        return -1;
    }
    match (*model).0.kind() {
        ModelKind::Retriever => 0,
        ModelKind::Ranker => 1,
    }
}

/// # Safety
/// `model` must be a live handle from this library or null.
#[no_mangle]
pub unsafe extern "C" fn rr_model_num_items(model: *const RrModel) -> usize {
    if model.is_null() {
        return 0;
    }
    (*model).0.num_items()
}

/// Write the model to the versioned binary checkpoint format.
///
/// # Safety
/// `model` must be a live handle; `path` a valid string.
#[no_mangle]
pub unsafe extern "C" fn rr_model_save(model: *const RrModel, path: *const c_char) -> RrStatus {
    guarded(|| {
        if model.is_null() {
            set_error("null model".into());
            return RrStatus::NullArgument;
        }
        let path = match c_str(path) {
            Ok(s) => PathBuf::from(s),
            Err(status) => return status,
        };
        match (*model).0.save(&path) {
            Ok(()) => RrStatus::Ok,
            Err(e) => fail(e),
        }
    })
}

/// Load a checkpoint written by [`rr_model_save`] or the CLI.
///
/// # Safety
/// `path` must be a valid string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn rr_model_load(path: *const c_char, out: *mut *mut RrModel) -> RrStatus {
    guarded(|| {
        if out.is_null() {
            set_error("null output pointer".into());
            return RrStatus::NullArgument;
        }
        let path = match c_str(path) {
            Ok(s) => PathBuf::from(s),
            Err(status) => return status,
        };
        match ScorerParams::load(&path) {
            Ok(m) => {
                *out = Box::into_raw(Box::new(RrModel(m)));
                RrStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// # Safety
/// `model` must be a handle returned by this library, freed at most once.
#[no_mangle]
pub unsafe extern "C" fn rr_model_free(model: *mut RrModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Evaluate a retriever/ranker pair on a dataset's held-out cases.
///
/// # Safety
/// All handles must be live and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn rr_evaluate(
    ds: *const RrDataset,
    retriever: *const RrModel,
    ranker: *const RrModel,
    cutoff: usize,
    retrieve_k: usize,
    exclude_interacted: bool,
    out: *mut RrMetrics,
) -> RrStatus {
    guarded(|| {
        if ds.is_null() || retriever.is_null() || ranker.is_null() || out.is_null() {
            set_error("null argument".into());
            return RrStatus::NullArgument;
        }
        if cutoff == 0 || retrieve_k < cutoff {
            set_error(format!(
                "need retrieve_k >= cutoff >= 1, got cutoff {cutoff}, retrieve_k {retrieve_k}"
            ));
            return RrStatus::InvalidArgument;
        }
        let cfg = EvalConfig {
            cutoff,
            retrieve_k,
            exclude_interacted,
        };
        let reports =
            retrank::evaluation::evaluate(&(*ds).0, &(*retriever).0, &(*ranker).0, &cfg, 0);
        *out = RrMetrics {
            retriever_ndcg: reports[0].ndcg,
            retriever_recall: reports[0].recall,
            retriever_mrr: reports[0].mrr,
            ranker_ndcg: reports[1].ndcg,
            ranker_recall: reports[1].recall,
            ranker_mrr: reports[1].mrr,
            two_stage_ndcg: reports[2].ndcg,
            two_stage_recall: reports[2].recall,
            two_stage_mrr: reports[2].mrr,
            num_cases: reports[0].num_cases,
        };
        RrStatus::Ok
    })
}

/// Sampled log-softmax over corrected logits (see the core estimators).
/// Returns NaN for a null array with nonzero length.
///
/// # Safety
/// `sample_corrected` must point to `len` doubles (or be null with len 0).
#[no_mangle]
pub unsafe extern "C" fn rr_sampled_log_softmax(
    positive_corrected: f64,
    sample_corrected: *const f64,
    len: usize,
) -> f64 {
    if len == 0 {
        return retrank::estimators::sampled_log_softmax(positive_corrected, &[]);
    }
    if sample_corrected.is_null() {
        return f64::NAN;
    }
    let samples = std::slice::from_raw_parts(sample_corrected, len);
    retrank::estimators::sampled_log_softmax(positive_corrected, samples)
}

/// Sampled KL divergence between teacher and student corrected logits over
/// one shared sample set.
///
/// # Safety
/// Both arrays must hold `len` doubles; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn rr_sampled_kl(
    ranker_corrected: *const f64,
    retriever_corrected: *const f64,
    len: usize,
    out: *mut f64,
) -> RrStatus {
    guarded(|| {
        if ranker_corrected.is_null() || retriever_corrected.is_null() || out.is_null() {
            set_error("null argument".into());
            return RrStatus::NullArgument;
        }
        if len == 0 {
            set_error("need at least one sample".into());
            return RrStatus::InvalidArgument;
        }
        let p = std::slice::from_raw_parts(ranker_corrected, len);
        let q = std::slice::from_raw_parts(retriever_corrected, len);
        match retrank::estimators::sampled_kl(p, q) {
            Ok(v) => {
                *out = v;
                RrStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// Entropy form of the sampled KL for samples drawn from the retriever's
/// softmax: `log(len) - H(softmax(score_diffs))`.
///
/// # Safety
/// `score_diffs` must hold `len` doubles; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn rr_entropy_form_kl(
    score_diffs: *const f64,
    len: usize,
    out: *mut f64,
) -> RrStatus {
    guarded(|| {
        if score_diffs.is_null() || out.is_null() {
            set_error("null argument".into());
            return RrStatus::NullArgument;
        }
        if len == 0 {
            set_error("need at least one sample".into());
            return RrStatus::InvalidArgument;
        }
        let diffs = std::slice::from_raw_parts(score_diffs, len);
        *out = retrank::estimators::entropy_form_kl(diffs);
        RrStatus::Ok
    })
}
