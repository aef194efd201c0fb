//! C ABI over the `tunebert` crate.
//!
//! Every fallible function returns a [`TbStatus`]; on failure a message is
//! available from [`tb_last_error`] on the same thread. Handles are opaque
//! and must be released with the matching `*_free` function.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use tunebert::experiments::Classifier;
use tunebert::longtext::{TruncationKind, TruncationStrategy};
use tunebert::numeric::Checkpoint;
use tunebert::optim::{effective_rate, stlr, LayerwiseLrSchedule, StlrSchedule};
use tunebert::tokenizer::{tokenize_ids, Vocabulary};

/// Result codes.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TbStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Io = 3,
    InvalidArgument = 4,
    Checkpoint = 5,
    BufferTooSmall = 6,
    Panic = 7,
    Internal = 8,
}

/// Truncation strategies for over-length token sequences.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TbTruncation {
    HeadOnly = 0,
    TailOnly = 1,
    HeadTail = 2,
}

/// Word-piece vocabulary handle.
pub struct TbVocab(Vocabulary);

/// Fine-tuned classifier handle.
pub struct TbClassifier(Classifier);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let s = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(s).ok());
}

fn status_of(err: &tunebert::Error) -> TbStatus {
    use tunebert::Error as E;
    match err {
        E::Io(_) => TbStatus::Io,
        E::Checkpoint(_) | E::Json(_) => TbStatus::Checkpoint,
        E::InvalidConfig(_) | E::SequenceTooLong { .. } | E::Vocab(_) | E::Empty(_) => TbStatus::InvalidArgument,
        _ => TbStatus::Internal,
    }
}

fn guard(f: impl FnOnce() -> Result<(), TbStatus>) -> TbStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => TbStatus::Ok,
        Ok(Err(s)) => s,
        Err(_) => {
            set_error("panic inside tunebert");
            TbStatus::Panic
        }
    }
}

fn fail(err: tunebert::Error) -> TbStatus {
    set_error(err.to_string());
    status_of(&err)
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, TbStatus> {
    if p.is_null() {
        set_error(format!("{what} is null"));
        return Err(TbStatus::NullPointer);
    }
    CStr::from_ptr(p).to_str().map_err(|_| {
        set_error(format!("{what} is not valid UTF-8"));
        TbStatus::InvalidUtf8
    })
}

unsafe fn ref_arg<'a, T>(p: *const T, what: &str) -> Result<&'a T, TbStatus> {
    p.as_ref().ok_or_else(|| {
        set_error(format!("{what} is null"));
        TbStatus::NullPointer
    })
}

/// Copies `src` into `out[..capacity]`, always storing the full length in `*out_len`.
unsafe fn write_out<T: Copy>(src: &[T], out: *mut T, capacity: usize, out_len: *mut usize) -> Result<(), TbStatus> {
    if out_len.is_null() {
        set_error("out_len is null");
        return Err(TbStatus::NullPointer);
    }
    *out_len = src.len();
    if src.len() > capacity {
        set_error(format!("output needs {} elements, capacity is {capacity}", src.len()));
        return Err(TbStatus::BufferTooSmall);
    }
    if !src.is_empty() {
        if out.is_null() {
            set_error("output buffer is null");
            return Err(TbStatus::NullPointer);
        }
        ptr::copy_nonoverlapping(src.as_ptr(), out, src.len());
    }
    Ok(())
}

/// Message for the most recent failure on this thread, or null. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn tb_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn tb_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads a vocabulary file (one token per line).
#[no_mangle]
pub unsafe extern "C" fn tb_vocab_load(path: *const c_char, out: *mut *mut TbVocab) -> TbStatus {
    guard(|| {
        let path = str_arg(path, "path")?;
        if out.is_null() {
            set_error("out is null");
            return Err(TbStatus::NullPointer);
        }
        let v = Vocabulary::load(Path::new(path)).map_err(fail)?;
        *out = Box::into_raw(Box::new(TbVocab(v)));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn tb_vocab_free(vocab: *mut TbVocab) {
    if !vocab.is_null() {
        drop(Box::from_raw(vocab));
    }
}

/// Number of tokens, or 0 for a null handle.
#[no_mangle]
pub unsafe extern "C" fn tb_vocab_size(vocab: *const TbVocab) -> usize {
    vocab.as_ref().map_or(0, |v| v.0.len())
}

/// Word-piece ids of `text` (no special tokens). `*out_len` always receives
/// the full count; `BufferTooSmall` is returned when it exceeds `capacity`.
#[no_mangle]
pub unsafe extern "C" fn tb_tokenize(
    vocab: *const TbVocab,
    text: *const c_char,
    out_ids: *mut u32,
    capacity: usize,
    out_len: *mut usize,
) -> TbStatus {
    guard(|| {
        let v = ref_arg(vocab, "vocab")?;
        let text = str_arg(text, "text")?;
        let ids = tokenize_ids(text, &v.0);
        write_out(&ids, out_ids, capacity, out_len)
    })
}

/// Keeps at most 510 ids: the first 510, the last 510, or the first 128
/// followed by the last 382.
#[no_mangle]
pub unsafe extern "C" fn tb_truncate(
    ids: *const u32,
    len: usize,
    kind: TbTruncation,
    out_ids: *mut u32,
    capacity: usize,
    out_len: *mut usize,
) -> TbStatus {
    guard(|| {
        if ids.is_null() && len > 0 {
            set_error("ids is null");
            return Err(TbStatus::NullPointer);
        }
        let input = if len == 0 { &[][..] } else { std::slice::from_raw_parts(ids, len) };
        let kind = match kind {
            TbTruncation::HeadOnly => TruncationKind::HeadOnly,
            TbTruncation::TailOnly => TruncationKind::TailOnly,
            TbTruncation::HeadTail => TruncationKind::HeadTail,
        };
        let kept = TruncationStrategy::new(kind).apply(input);
        write_out(&kept, out_ids, capacity, out_len)
    })
}

/// Slanted triangular learning rate at `step` of `total`.
#[no_mangle]
pub extern "C" fn tb_stlr(step: usize, total: usize, warmup_proportion: f64, peak: f64) -> f64 {
    stlr(step, total, warmup_proportion, peak)
}

/// Rate of parameter group `depth` (0 = embeddings, 1..=layers = blocks,
/// layers + 1 = task head) at `step`, with layer-wise decay `decay`.
#[no_mangle]
pub unsafe extern "C" fn tb_effective_rate(
    depth: usize,
    layers: usize,
    base_lr: f64,
    decay: f64,
    step: usize,
    total: usize,
    warmup_proportion: f64,
    out_rate: *mut f64,
) -> TbStatus {
    guard(|| {
        if out_rate.is_null() {
            set_error("out_rate is null");
            return Err(TbStatus::NullPointer);
        }
        if depth > layers + 1 {
            set_error(format!("depth {depth} outside 0..={}", layers + 1));
            return Err(TbStatus::InvalidArgument);
        }
        let lw = LayerwiseLrSchedule::new(base_lr, decay, layers).map_err(fail)?;
        let sched = StlrSchedule::new(total, warmup_proportion, base_lr).map_err(fail)?;
        *out_rate = effective_rate(depth, &lw, &sched, step);
        Ok(())
    })
}

/// Loads a classifier checkpoint. When `vocab` is non-null its hash must match
/// the one recorded in the checkpoint.
#[no_mangle]
pub unsafe extern "C" fn tb_classifier_load(
    path: *const c_char,
    vocab: *const TbVocab,
    out: *mut *mut TbClassifier,
) -> TbStatus {
    guard(|| {
        let path = str_arg(path, "path")?;
        if out.is_null() {
            set_error("out is null");
            return Err(TbStatus::NullPointer);
        }
        let ckpt = Checkpoint::load(Path::new(path)).map_err(fail)?;
        if let (Some(v), Some(h)) = (vocab.as_ref(), ckpt.vocab_hash.as_ref()) {
            if *h != v.0.hash() {
                set_error("checkpoint was trained with a different vocabulary");
                return Err(TbStatus::Checkpoint);
            }
        }
        let clf = Classifier::from_checkpoint(&ckpt).map_err(fail)?;
        *out = Box::into_raw(Box::new(TbClassifier(clf)));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn tb_classifier_free(clf: *mut TbClassifier) {
    if !clf.is_null() {
        drop(Box::from_raw(clf));
    }
}

/// Number of classes, or 0 for a null handle.
#[no_mangle]
pub unsafe extern "C" fn tb_classifier_num_classes(clf: *const TbClassifier) -> usize {
    clf.as_ref().map_or(0, |c| c.0.head.classes)
}

/// Class probabilities for `text`, written to `out_probs[..num_classes]`.
#[no_mangle]
pub unsafe extern "C" fn tb_classify(
    clf: *const TbClassifier,
    vocab: *const TbVocab,
    text: *const c_char,
    out_probs: *mut f32,
    capacity: usize,
    out_len: *mut usize,
) -> TbStatus {
    guard(|| {
        let c = ref_arg(clf, "classifier")?;
        let v = ref_arg(vocab, "vocab")?;
        let text = str_arg(text, "text")?;
        let ids = tokenize_ids(text, &v.0);
        let probs = c.0.predict_proba(&[ids.as_slice()]).map_err(fail)?;
        write_out(&probs[0], out_probs, capacity, out_len)
    })
}

/// Class probabilities for already tokenized word-piece ids.
#[no_mangle]
pub unsafe extern "C" fn tb_classify_ids(
    clf: *const TbClassifier,
    ids: *const u32,
    len: usize,
    out_probs: *mut f32,
    capacity: usize,
    out_len: *mut usize,
) -> TbStatus {
    guard(|| {
        let c = ref_arg(clf, "classifier")?;
        if ids.is_null() && len > 0 {
            set_error("ids is null");
            return Err(TbStatus::NullPointer);
        }
        let input = if len == 0 { &[][..] } else { std::slice::from_raw_parts(ids, len) };
        let vocab_size = c.0.model.config.vocab_size;
        if let Some(bad) = input.iter().find(|&&i| i as usize >= vocab_size) {
            set_error(format!("token id {bad} outside vocabulary of {vocab_size}"));
            return Err(TbStatus::InvalidArgument);
        }
        let probs = c.0.predict_proba(&[input]).map_err(fail)?;
        write_out(&probs[0], out_probs, capacity, out_len)
    })
}
