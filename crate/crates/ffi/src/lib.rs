//! C interface to `ctxlm`.
//!
//! Models are opaque handles created by `*_load` / `*_train` and released
//! with the matching `*_free`. Every fallible call returns a [`CtxlmStatus`]
//! and writes its result through an out-pointer; on failure a description is
//! available from [`ctxlm_last_error_message`] on the same thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use ctxlm::corpus::{build_vocabulary, load_corpus, parse_corpus, ContextWindow, Document, Sentence, Vocabulary};
use ctxlm::evaluation::{corpus_perplexity, SentenceScorer};
use ctxlm::ngram::NGramModel;
use ctxlm::training::AnyCheckpoint;
use ctxlm::{Error, Model};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CtxlmStatus {
    Ok = 0,
    NullPointer = 1,
    Io = 2,
    Format = 3,
    InvalidArgument = 4,
    Numeric = 5,
    Utf8 = 6,
    Panic = 7,
}

impl From<&Error> for CtxlmStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::Io(_) => CtxlmStatus::Io,
            Error::Format(_) | Error::Data(_) | Error::Shape(_) => CtxlmStatus::Format,
            Error::NonFinite(_) => CtxlmStatus::Numeric,
            Error::Utf8 { .. } => CtxlmStatus::Utf8,
            Error::InvalidArgument(_) | Error::Config(_) | Error::UnknownVariant(_) => CtxlmStatus::InvalidArgument,
        }
    }
}

enum Weights {
    F32(Model<f32>),
    F64(Model<f64>),
}

/// A trained neural language model with its vocabulary.
pub struct CtxlmModel {
    weights: Weights,
    vocab: Vocabulary,
    n: usize,
}

impl CtxlmModel {
    fn scorer(&self) -> &dyn SentenceScorer {
        match &self.weights {
            Weights::F32(m) => m,
            Weights::F64(m) => m,
        }
    }
}

/// A modified Kneser-Ney n-gram model with its vocabulary.
pub struct CtxlmNgram {
    model: NGramModel,
    vocab: Vocabulary,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Failure(CtxlmStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure((&e).into(), e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(CtxlmStatus::NullPointer, format!("`{what}` is null"))
}

/// Runs `f`, recording any error or panic for `ctxlm_last_error_message`.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> CtxlmStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => CtxlmStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_last_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(format!("panic: {msg}"));
            CtxlmStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|e| {
        Failure(
            CtxlmStatus::Utf8,
            format!("`{what}` is not UTF-8 (byte {})", e.valid_up_to()),
        )
    })
}

unsafe fn out_arg<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| null(what))
}

fn read_docs(path: &str, vocab: &Vocabulary) -> Result<Vec<Document>, Failure> {
    let file =
        std::fs::File::open(PathBuf::from(path)).map_err(|e| Failure(CtxlmStatus::Io, format!("{path}: {e}")))?;
    Ok(vocab.encode_documents(&load_corpus(std::io::BufReader::new(file))?))
}

/// Sentences of `text`, one per non-blank line.
fn sentences(text: &str, vocab: &Vocabulary) -> Vec<Sentence> {
    parse_corpus(text)
        .iter()
        .flatten()
        .map(|tokens| vocab.encode_sentence(tokens))
        .collect()
}

fn single_sentence(text: &str, vocab: &Vocabulary) -> Result<Sentence, Failure> {
    let tokens: Vec<String> = text.split_whitespace().map(str::to_string).collect();
    if text.trim().contains('\n') {
        return Err(Failure(
            CtxlmStatus::InvalidArgument,
            "target must be a single line".into(),
        ));
    }
    Ok(vocab.encode_sentence(&tokens))
}

/// Static version string, e.g. `"0.1.0"`.
#[no_mangle]
pub extern "C" fn ctxlm_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or null if none. The
/// pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn ctxlm_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

/// Loads a checkpoint written by `ctxlm train`.
///
/// # Safety
/// `path` must be a valid C string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ctxlm_model_load(path: *const c_char, out: *mut *mut CtxlmModel) -> CtxlmStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = std::ptr::null_mut();
        let path = str_arg(path, "path")?;
        let ckpt = AnyCheckpoint::load(path)?;
        let vocab = ckpt.vocab().clone();
        let n = ckpt.config().n;
        let weights = match ckpt {
            AnyCheckpoint::F32(c) => Weights::F32(c.model()?),
            AnyCheckpoint::F64(c) => Weights::F64(c.model()?),
        };
        *out = Box::into_raw(Box::new(CtxlmModel { weights, vocab, n }));
        Ok(())
    })
}

/// Releases a model. Null is ignored.
///
/// # Safety
/// `model` must come from `ctxlm_model_load` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn ctxlm_model_free(model: *mut CtxlmModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Vocabulary size including the reserved tokens, 0 for null.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ctxlm_model_vocab_size(model: *const CtxlmModel) -> usize {
    model.as_ref().map_or(0, |m| m.vocab.len())
}

/// Number of context sentences the model was trained with, 0 for null.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ctxlm_model_context_size(model: *const CtxlmModel) -> usize {
    model.as_ref().map_or(0, |m| m.n)
}

/// NLL in nats of `target` (whitespace-separated tokens, EOS included)
/// given `context`, one preceding sentence per line, oldest first. `context`
/// may be null or empty.
///
/// # Safety
/// `model` must be a live handle, strings valid C strings, `out` valid.
#[no_mangle]
pub unsafe extern "C" fn ctxlm_model_sentence_nll(
    model: *const CtxlmModel,
    context: *const c_char,
    target: *const c_char,
    out: *mut f64,
) -> CtxlmStatus {
    guard(|| {
        let model = model.as_ref().ok_or_else(|| null("model"))?;
        let out = out_arg(out, "out")?;
        let context = if context.is_null() {
            Vec::new()
        } else {
            sentences(str_arg(context, "context")?, &model.vocab)
        };
        let target = single_sentence(str_arg(target, "target")?, &model.vocab)?;
        let nlls = model.scorer().token_nlls(ContextWindow::new(&target, &context))?;
        *out = nlls.iter().sum();
        Ok(())
    })
}

/// Perplexity of the corpus file at `path` with `n` context sentences.
///
/// # Safety
/// `model` must be a live handle, `path` a valid C string, `out` valid.
#[no_mangle]
pub unsafe extern "C" fn ctxlm_model_corpus_perplexity(
    model: *const CtxlmModel,
    path: *const c_char,
    n: usize,
    out: *mut f64,
) -> CtxlmStatus {
    guard(|| {
        let model = model.as_ref().ok_or_else(|| null("model"))?;
        let out = out_arg(out, "out")?;
        let docs = read_docs(str_arg(path, "path")?, &model.vocab)?;
        *out = corpus_perplexity(model.scorer(), &docs, n)?.perplexity();
        Ok(())
    })
}

/// Trains an n-gram model of `order` on the corpus at `path`, keeping the
/// `vocab_size` most frequent types (reserved tokens included).
///
/// # Safety
/// `path` must be a valid C string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ctxlm_ngram_train(
    path: *const c_char,
    order: usize,
    vocab_size: usize,
    out: *mut *mut CtxlmNgram,
) -> CtxlmStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = std::ptr::null_mut();
        let path = str_arg(path, "path")?;
        if order == 0 {
            return Err(Failure(CtxlmStatus::InvalidArgument, "order must be at least 1".into()));
        }
        let file = std::fs::File::open(path).map_err(|e| Failure(CtxlmStatus::Io, format!("{path}: {e}")))?;
        let raw = load_corpus(std::io::BufReader::new(file))?;
        let vocab =
            build_vocabulary(&raw, vocab_size).map_err(|e| Failure(CtxlmStatus::InvalidArgument, e.to_string()))?;
        let model = NGramModel::train(&vocab.encode_documents(&raw), order, vocab.len())?;
        *out = Box::into_raw(Box::new(CtxlmNgram { model, vocab }));
        Ok(())
    })
}

/// Releases an n-gram model. Null is ignored.
///
/// # Safety
/// `ngram` must come from `ctxlm_ngram_train` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn ctxlm_ngram_free(ngram: *mut CtxlmNgram) {
    if !ngram.is_null() {
        drop(Box::from_raw(ngram));
    }
}

/// Natural-log probability of `sentence`, EOS included.
///
/// # Safety
/// `ngram` must be a live handle, `sentence` a valid C string, `out` valid.
#[no_mangle]
pub unsafe extern "C" fn ctxlm_ngram_sentence_log_prob(
    ngram: *const CtxlmNgram,
    sentence: *const c_char,
    out: *mut f64,
) -> CtxlmStatus {
    guard(|| {
        let ngram = ngram.as_ref().ok_or_else(|| null("ngram"))?;
        let out = out_arg(out, "out")?;
        let s = single_sentence(str_arg(sentence, "sentence")?, &ngram.vocab)?;
        *out = ngram.model.sentence_log_probability(&s)?;
        Ok(())
    })
}

/// Perplexity of the corpus file at `path`.
///
/// # Safety
/// `ngram` must be a live handle, `path` a valid C string, `out` valid.
#[no_mangle]
pub unsafe extern "C" fn ctxlm_ngram_corpus_perplexity(
    ngram: *const CtxlmNgram,
    path: *const c_char,
    out: *mut f64,
) -> CtxlmStatus {
    guard(|| {
        let ngram = ngram.as_ref().ok_or_else(|| null("ngram"))?;
        let out = out_arg(out, "out")?;
        let docs = read_docs(str_arg(path, "path")?, &ngram.vocab)?;
        *out = corpus_perplexity(&ngram.model, &docs, 0)?.perplexity();
        Ok(())
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn version_is_nul_terminated() {
        let v = unsafe { CStr::from_ptr(ctxlm_version()) };
        assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
    }

    #[test]
    fn panics_become_status_codes() {
        let status = guard(|| panic!("boom"));
        assert_eq!(status, CtxlmStatus::Panic);
        let msg = unsafe { CStr::from_ptr(ctxlm_last_error_message()) };
        assert!(msg.to_str().unwrap().contains("boom"));
    }

    #[test]
    fn error_kinds_map_to_codes() {
        assert_eq!(CtxlmStatus::from(&Error::Format("x".into())), CtxlmStatus::Format);
        assert_eq!(CtxlmStatus::from(&Error::NonFinite("x".into())), CtxlmStatus::Numeric);
        assert_eq!(CtxlmStatus::from(&Error::Utf8 { offset: 0 }), CtxlmStatus::Utf8);
    }

    #[test]
    fn multi_line_target_is_rejected() {
        let v = Vocabulary::reserved();
        assert!(single_sentence("a b\nc", &v).is_err());
        assert_eq!(single_sentence("a b\n", &v).ok().unwrap().len(), 2);
    }
}
