use std::ffi::{CStr, CString};
use std::ptr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use ctxlm::config::TrainConfig;
use ctxlm::corpus::Vocabulary;
use ctxlm::training::Checkpoint;
use ctxlm::{Model, Variant};
use ctxlm_ffi::*;

fn cstr(s: &str) -> CString {
    CString::new(s).unwrap()
}

fn last_error() -> String {
    let p = ctxlm_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_str().unwrap().to_string()
}

const CORPUS: &str = "a b c\nd e f g\n\nh a\nb c d e\nf\n";

/// Zero-weight model over ten types: every event has probability 1/10.
fn uniform_checkpoint(dir: &std::path::Path) -> CString {
    let config = TrainConfig {
        variant: Variant::SeqBowAttLf,
        n: 2,
        d_h: 4,
        d_emb: 4,
        d_ctx: 3,
        vocab_size: 10,
        ..TrainConfig::default()
    };
    let vocab = Vocabulary::from_tokens(["a", "b", "c", "d", "e", "f", "g", "h"]);
    let mut model: Model<f64> = Model::new(config.model_spec(vocab.len()), &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
    let ids: Vec<_> = model.params().ids().collect();
    for id in ids {
        model.params_mut().get_mut(id).fill(0.0);
    }
    let path = dir.join("m.ckpt");
    Checkpoint::from_model(config, vocab, &model).save(&path).unwrap();
    cstr(path.to_str().unwrap())
}

#[test]
fn model_round_trip_through_the_c_interface() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = uniform_checkpoint(dir.path());
    let corpus = dir.path().join("c.txt");
    std::fs::write(&corpus, CORPUS).unwrap();
    let corpus = cstr(corpus.to_str().unwrap());

    let mut model = ptr::null_mut();
    unsafe {
        assert_eq!(ctxlm_model_load(ckpt.as_ptr(), &mut model), CtxlmStatus::Ok);
        assert_eq!(ctxlm_model_vocab_size(model), 10);
        assert_eq!(ctxlm_model_context_size(model), 2);

        let mut nll = 0.0;
        let ctx = cstr("a b\nc d e");
        let target = cstr("f g h");
        assert_eq!(
            ctxlm_model_sentence_nll(model, ctx.as_ptr(), target.as_ptr(), &mut nll),
            CtxlmStatus::Ok
        );
        assert!((nll - 4.0 * 10f64.ln()).abs() < 1e-12, "{nll}");
        assert_eq!(
            ctxlm_model_sentence_nll(model, ptr::null(), target.as_ptr(), &mut nll),
            CtxlmStatus::Ok
        );
        assert!((nll - 4.0 * 10f64.ln()).abs() < 1e-12);

        let mut ppl = 0.0;
        assert_eq!(
            ctxlm_model_corpus_perplexity(model, corpus.as_ptr(), 2, &mut ppl),
            CtxlmStatus::Ok
        );
        assert!((ppl - 10.0).abs() < 1e-9, "{ppl}");
        ctxlm_model_free(model);
    }
}

#[test]
fn ngram_through_the_c_interface() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("c.txt");
    std::fs::write(&corpus, CORPUS.repeat(5)).unwrap();
    let corpus = cstr(corpus.to_str().unwrap());
    let mut ngram = ptr::null_mut();
    unsafe {
        assert_eq!(ctxlm_ngram_train(corpus.as_ptr(), 3, 100, &mut ngram), CtxlmStatus::Ok);
        let mut lp = 0.0;
        let s = cstr("a b c");
        assert_eq!(
            ctxlm_ngram_sentence_log_prob(ngram, s.as_ptr(), &mut lp),
            CtxlmStatus::Ok
        );
        assert!(lp < 0.0 && lp.is_finite());
        let mut ppl = 0.0;
        assert_eq!(
            ctxlm_ngram_corpus_perplexity(ngram, corpus.as_ptr(), &mut ppl),
            CtxlmStatus::Ok
        );
        assert!(ppl > 1.0 && ppl < 10.0, "{ppl}");
        ctxlm_ngram_free(ngram);
    }
}

#[test]
fn failures_set_codes_and_messages() {
    let dir = tempfile::tempdir().unwrap();
    let missing = cstr(dir.path().join("none.ckpt").to_str().unwrap());
    let garbage = dir.path().join("garbage.ckpt");
    std::fs::write(&garbage, b"not a checkpoint").unwrap();
    let garbage = cstr(garbage.to_str().unwrap());
    let mut model = ptr::null_mut();
    unsafe {
        assert_eq!(ctxlm_model_load(missing.as_ptr(), &mut model), CtxlmStatus::Io);
        assert!(model.is_null());
        assert_eq!(ctxlm_model_load(garbage.as_ptr(), &mut model), CtxlmStatus::Format);
        assert!(last_error().contains("checkpoint"), "{}", last_error());
        assert_eq!(ctxlm_model_load(ptr::null(), &mut model), CtxlmStatus::NullPointer);
        assert!(last_error().contains("path"));
        assert_eq!(
            ctxlm_model_load(missing.as_ptr(), ptr::null_mut()),
            CtxlmStatus::NullPointer
        );

        let bad = [0xffu8, 0xfe, 0];
        assert_eq!(ctxlm_model_load(bad.as_ptr().cast(), &mut model), CtxlmStatus::Utf8);

        let mut out = ptr::null_mut();
        assert_eq!(
            ctxlm_ngram_train(missing.as_ptr(), 0, 10, &mut out),
            CtxlmStatus::InvalidArgument
        );
        let mut x = 0.0;
        assert_eq!(
            ctxlm_ngram_corpus_perplexity(ptr::null(), missing.as_ptr(), &mut x),
            CtxlmStatus::NullPointer
        );

        assert_eq!(ctxlm_model_vocab_size(ptr::null()), 0);
        ctxlm_model_free(ptr::null_mut());
        ctxlm_ngram_free(ptr::null_mut());
    }
}

#[test]
fn header_declares_every_export() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/ctxlm.h")).unwrap();
    for name in [
        "ctxlm_version",
        "ctxlm_last_error_message",
        "ctxlm_model_load",
        "ctxlm_model_free",
        "ctxlm_model_vocab_size",
        "ctxlm_model_context_size",
        "ctxlm_model_sentence_nll",
        "ctxlm_model_corpus_perplexity",
        "ctxlm_ngram_train",
        "ctxlm_ngram_free",
        "ctxlm_ngram_sentence_log_prob",
        "ctxlm_ngram_corpus_perplexity",
        "typedef struct CtxlmModel CtxlmModel",
        "CTXLM_STATUS_PANIC = 7",
    ] {
        assert!(header.contains(name), "missing {name}");
    }
}
