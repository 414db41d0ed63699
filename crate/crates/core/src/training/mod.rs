//! Adadelta training with length-bucketed minibatches, early stopping on
//! validation NLL and binary checkpoints.

mod checkpoint;

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::config::{Precision, TrainConfig};
use crate::corpus::{all_windows, filter_by_length, ContextWindow, Document, Vocabulary};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::numeric::{DenseMatrix, Gradients, ParamStore, Real};

pub use checkpoint::{AnyCheckpoint, Checkpoint, FORMAT_VERSION, MAGIC};

/// Windows handled sequentially by one worker before the ordered reduction.
/// Fixed so that results do not depend on the thread count.
const CHUNK: usize = 4;

/// Running averages for one parameter array.
#[derive(Debug, Clone, PartialEq)]
pub struct AdadeltaSlot<T> {
    /// `E[g^2]`
    pub eg: DenseMatrix<T>,
    /// `E[dx^2]`
    pub edx: DenseMatrix<T>,
}

impl<T: Real> AdadeltaSlot<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            eg: DenseMatrix::zeros(rows, cols),
            edx: DenseMatrix::zeros(rows, cols),
        }
    }
}

/// Applies one Adadelta step to `param` in place. A non-finite gradient
/// leaves everything untouched and names the parameter in the error.
pub fn adadelta_update<T: Real>(
    name: &str,
    param: &mut DenseMatrix<T>,
    grad: &DenseMatrix<T>,
    slot: &mut AdadeltaSlot<T>,
    rho: f64,
    eps: f64,
) -> Result<()> {
    if param.shape() != grad.shape() || slot.eg.shape() != grad.shape() || slot.edx.shape() != grad.shape() {
        return Err(Error::Shape(format!(
            "`{name}`: parameter {:?}, gradient {:?}, state {:?}",
            param.shape(),
            grad.shape(),
            slot.eg.shape()
        )));
    }
    if !grad.all_finite() {
        return Err(Error::NonFinite(format!("gradient of `{name}`")));
    }
    let rho = T::from_f64_lossy(rho);
    let eps = T::from_f64_lossy(eps);
    let one_minus = T::one() - rho;
    let p = param.as_mut_slice();
    let eg = slot.eg.as_mut_slice();
    let edx = slot.edx.as_mut_slice();
    for (i, &g) in grad.as_slice().iter().enumerate() {
        eg[i] = rho * eg[i] + one_minus * g * g;
        let dx = -((edx[i] + eps).sqrt() / (eg[i] + eps).sqrt()) * g;
        edx[i] = rho * edx[i] + one_minus * dx * dx;
        p[i] = p[i] + dx;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdadeltaState<T> {
    slots: Vec<AdadeltaSlot<T>>,
}

impl<T: Real> AdadeltaState<T> {
    pub fn new(params: &ParamStore<T>) -> Self {
        Self {
            slots: params
                .iter()
                .map(|(_, m)| AdadeltaSlot::zeros(m.rows(), m.cols()))
                .collect(),
        }
    }

    pub fn from_slots(slots: Vec<AdadeltaSlot<T>>) -> Self {
        Self { slots }
    }

    pub fn slots(&self) -> &[AdadeltaSlot<T>] {
        &self.slots
    }

    /// Updates every parameter. All gradients are checked before anything is
    /// written, so a failure leaves parameters and state unchanged.
    pub fn step(&mut self, params: &mut ParamStore<T>, grads: &Gradients<T>, rho: f64, eps: f64) -> Result<()> {
        if self.slots.len() != params.len() {
            return Err(Error::Shape(format!(
                "optimizer tracks {} arrays, model has {}",
                self.slots.len(),
                params.len()
            )));
        }
        let ids: Vec<_> = params.ids().collect();
        for &id in &ids {
            if !grads.get(id).all_finite() {
                return Err(Error::NonFinite(format!("gradient of `{}`", params.name(id))));
            }
        }
        for id in ids {
            let name = params.name(id).to_string();
            adadelta_update(
                &name,
                params.get_mut(id),
                grads.get(id),
                &mut self.slots[id.index()],
                rho,
                eps,
            )?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Improved,
    NoImprovement,
    Stop,
}

/// Tracks the best validation NLL. Training stops once more than
/// `patience` consecutive epochs have passed without improvement.
#[derive(Debug, Clone, PartialEq)]
pub struct EarlyStopping {
    patience: usize,
    best: Option<(usize, f64)>,
    bad_epochs: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: None,
            bad_epochs: 0,
        }
    }

    pub fn observe(&mut self, epoch: usize, valid_nll: f64) -> Verdict {
        match self.best {
            Some((_, b)) if !(valid_nll < b) => {
                self.bad_epochs += 1;
                if self.bad_epochs > self.patience {
                    Verdict::Stop
                } else {
                    Verdict::NoImprovement
                }
            }
            _ => {
                self.best = Some((epoch, valid_nll));
                self.bad_epochs = 0;
                Verdict::Improved
            }
        }
    }

    /// `(epoch, valid_nll)` of the best epoch so far.
    pub fn best(&self) -> Option<(usize, f64)> {
        self.best
    }
}

/// Groups window indices into batches of similar target length. Windows
/// are shuffled first so equal-length windows mix across epochs, then the
/// batch order is shuffled.
pub fn make_batches<R: rand::Rng + ?Sized>(
    windows: &[ContextWindow<'_>],
    batch_size: usize,
    rng: &mut R,
) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..windows.len()).collect();
    order.shuffle(rng);
    order.sort_by_key(|&i| windows[i].target.len());
    let mut batches: Vec<Vec<usize>> = order.chunks(batch_size.max(1)).map(<[usize]>::to_vec).collect();
    batches.shuffle(rng);
    batches
}

/// Per-window sentence NLLs, in input order.
pub fn window_nlls<T: Real>(model: &Model<T>, windows: &[ContextWindow<'_>]) -> Result<Vec<T>> {
    windows.par_iter().map(|&w| model.sentence_nll(w)).collect()
}

/// Mean sentence NLL over `windows`, summed in input order.
pub fn mean_sentence_nll<T: Real>(model: &Model<T>, windows: &[ContextWindow<'_>]) -> Result<f64> {
    if windows.is_empty() {
        return Err(Error::Data("no sentences to score".into()));
    }
    let nlls = window_nlls(model, windows)?;
    let total: f64 = nlls.iter().map(|x| x.to_f64().unwrap_or(f64::NAN)).sum();
    Ok(total / windows.len() as f64)
}

/// Mean NLL and mean gradient over a batch. Every window is unrolled on its
/// own tape to its exact length, so no padded position can contribute.
/// Chunks are reduced in input order, making the result independent of the
/// number of worker threads.
pub fn gradient_batch<T: Real>(model: &Model<T>, windows: &[ContextWindow<'_>]) -> Result<(T, Gradients<T>)> {
    if windows.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let partials: Vec<(T, Gradients<T>)> = windows
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut g = Gradients::zeros_like(model.params());
            let mut nll = T::zero();
            for &w in chunk {
                nll = nll + model.accumulate_gradients(w, &mut g)?;
            }
            Ok((nll, g))
        })
        .collect::<Result<_>>()?;
    let mut iter = partials.into_iter();
    let (mut nll, mut grads) = iter.next().expect("non-empty batch");
    for (n, g) in iter {
        nll = nll + n;
        grads.add_assign(&g);
    }
    let k = T::from_usize(windows.len()).expect("batch size fits the float type");
    grads.scale(T::one() / k);
    Ok((nll / k, grads))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean sentence NLL over the epoch's minibatches, before each update.
    pub train_nll: f64,
    pub valid_nll: f64,
    pub seconds: f64,
}

pub const LOG_HEADER: &str = "epoch,train_nll,valid_nll,seconds";

impl EpochRecord {
    /// One CSV log line without newline. With `timing` off the seconds
    /// column is written as zero so reruns produce identical logs.
    pub fn csv_line(&self, timing: bool) -> String {
        let secs = if timing { self.seconds } else { 0.0 };
        format!("{},{:.9},{:.9},{:.3}", self.epoch, self.train_nll, self.valid_nll, secs)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TrainStatus {
    EarlyStopped,
    MaxEpochs,
    /// A loss or gradient became non-finite. The checkpoint is the last good
    /// one.
    Diverged {
        epoch: usize,
        message: String,
    },
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    /// Parameters of the epoch with the lowest validation NLL.
    pub best: Checkpoint<T>,
    pub history: Vec<EpochRecord>,
    pub status: TrainStatus,
}

fn precision_of<T: Real>() -> Precision {
    if T::DTYPE == f32::DTYPE {
        Precision::F32
    } else {
        Precision::F64
    }
}

/// Random stream used for initialization (stream 0) and for shuffling in
/// `epoch` (stream `epoch`).
pub fn epoch_rng(seed: u64, epoch: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch);
    rng
}

/// Trains a fresh model from `config`, calling `on_epoch` after each epoch.
///
/// Training targets are length-filtered; validation uses every sentence.
pub fn train<T: Real>(
    config: &TrainConfig,
    vocab: &Vocabulary,
    train_docs: &[Document],
    valid_docs: &[Document],
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome<T>> {
    config.validate()?;
    let mut config = config.clone();
    config.precision = precision_of::<T>();
    let filtered = filter_by_length(train_docs, config.max_len);
    let train_windows = all_windows(&filtered, config.n);
    let valid_windows = all_windows(valid_docs, config.n);
    if train_windows.is_empty() {
        return Err(Error::Data("training corpus has no target sentences".into()));
    }
    if valid_windows.is_empty() {
        return Err(Error::Data("validation corpus has no sentences".into()));
    }

    let spec = config.model_spec(vocab.len());
    let mut model: Model<T> = Model::new(spec, &mut epoch_rng(config.seed, 0))?;
    let mut optimizer = AdadeltaState::new(model.params());
    let mut stopper = EarlyStopping::new(config.patience);
    let mut best = Checkpoint::new(config.clone(), vocab.clone(), model.params().clone(), optimizer.clone());
    best.best_valid_nll = f64::INFINITY;
    let mut history = Vec::new();
    let clip = T::from_f64_lossy(config.clip_norm);

    for epoch in 1..=config.max_epochs {
        let started = Instant::now();
        let mut rng = epoch_rng(config.seed, epoch as u64);
        let batches = make_batches(&train_windows, config.batch_size, &mut rng);
        let mut total = 0.0;
        let mut batch_windows = Vec::with_capacity(config.batch_size);
        for batch in &batches {
            batch_windows.clear();
            batch_windows.extend(batch.iter().map(|&i| train_windows[i]));
            let step = gradient_batch(&model, &batch_windows).and_then(|(nll, mut grads)| {
                if config.clip_norm > 0.0 {
                    let norm = grads.clip_global_norm(clip);
                    if !norm.is_finite() {
                        return Err(Error::NonFinite("gradient norm".into()));
                    }
                }
                optimizer.step(model.params_mut(), &grads, config.rho, config.eps)?;
                Ok(nll)
            });
            match step {
                Ok(nll) => total += nll.to_f64().unwrap_or(f64::NAN) * batch.len() as f64,
                Err(Error::NonFinite(message)) => {
                    return Ok(TrainOutcome {
                        best,
                        history,
                        status: TrainStatus::Diverged { epoch, message },
                    })
                }
                Err(e) => return Err(e),
            }
        }
        let valid_nll = match mean_sentence_nll(&model, &valid_windows) {
            Ok(v) if v.is_finite() => v,
            Ok(_) | Err(Error::NonFinite(_)) => {
                return Ok(TrainOutcome {
                    best,
                    history,
                    status: TrainStatus::Diverged {
                        epoch,
                        message: "validation NLL".into(),
                    },
                })
            }
            Err(e) => return Err(e),
        };
        let record = EpochRecord {
            epoch,
            train_nll: total / train_windows.len() as f64,
            valid_nll,
            seconds: started.elapsed().as_secs_f64(),
        };
        log::info!(
            "epoch {epoch}: train {:.4} valid {:.4} ({:.1}s)",
            record.train_nll,
            record.valid_nll,
            record.seconds
        );
        on_epoch(&record);
        history.push(record);
        match stopper.observe(epoch, valid_nll) {
            Verdict::Improved => {
                best = Checkpoint::new(config.clone(), vocab.clone(), model.params().clone(), optimizer.clone());
                best.epoch = epoch;
                best.best_valid_nll = valid_nll;
                best.rng_stream = epoch as u64;
            }
            Verdict::NoImprovement => {}
            Verdict::Stop => {
                return Ok(TrainOutcome {
                    best,
                    history,
                    status: TrainStatus::EarlyStopped,
                })
            }
        }
    }
    Ok(TrainOutcome {
        best,
        history,
        status: TrainStatus::MaxEpochs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{parse_corpus, Sentence};
    use crate::model::{ModelDims, ModelSpec};
    use crate::variant::Variant;

    fn single(g: f64) -> (DenseMatrix<f64>, DenseMatrix<f64>, AdadeltaSlot<f64>) {
        (
            DenseMatrix::zeros(1, 1),
            DenseMatrix::from_vec(1, 1, vec![g]).unwrap(),
            AdadeltaSlot::zeros(1, 1),
        )
    }

    #[test]
    fn adadelta_first_step() {
        let (mut p, g, mut s) = single(1.0);
        adadelta_update("w", &mut p, &g, &mut s, 0.95, 1e-6).unwrap();
        let want = -(1e-6f64).sqrt() / (0.05f64 + 1e-6).sqrt();
        assert!((p.get(0, 0) - want).abs() < 1e-15);
        assert!((p.get(0, 0) + 4.4720e-3).abs() < 1e-7);
        assert!((s.eg.get(0, 0) - 0.05).abs() < 1e-15);
        assert!((s.edx.get(0, 0) - 0.05 * want * want).abs() < 1e-18);
    }

    #[test]
    fn adadelta_zero_gradient_only_decays() {
        let mut p = DenseMatrix::<f64>::from_vec(1, 2, vec![0.3, -0.7]).unwrap();
        let g = DenseMatrix::zeros(1, 2);
        let mut s = AdadeltaSlot {
            eg: DenseMatrix::from_vec(1, 2, vec![0.2, 0.4]).unwrap(),
            edx: DenseMatrix::from_vec(1, 2, vec![0.1, 0.0]).unwrap(),
        };
        adadelta_update("w", &mut p, &g, &mut s, 0.9, 1e-6).unwrap();
        assert_eq!(p.as_slice(), &[0.3, -0.7]);
        assert!((s.eg.get(0, 0) - 0.18).abs() < 1e-15);
        assert!((s.edx.get(0, 0) - 0.09).abs() < 1e-15);
    }

    #[test]
    fn adadelta_step_is_scale_free() {
        let (mut p1, g1, mut s1) = single(0.5);
        let (mut p2, g2, mut s2) = single(5.0);
        adadelta_update("w", &mut p1, &g1, &mut s1, 0.95, 1e-6).unwrap();
        adadelta_update("w", &mut p2, &g2, &mut s2, 0.95, 1e-6).unwrap();
        let (a, b) = (p1.get(0, 0), p2.get(0, 0));
        assert!(((a - b) / a).abs() < 0.01, "{a} vs {b}");
    }

    #[test]
    fn adadelta_rejects_non_finite_by_name() {
        let (mut p, _, mut s) = single(0.0);
        let g = DenseMatrix::from_vec(1, 1, vec![f64::NAN]).unwrap();
        let err = adadelta_update("lstm.w_i", &mut p, &g, &mut s, 0.95, 1e-6).unwrap_err();
        assert!(err.to_string().contains("lstm.w_i"));
        assert_eq!(p.get(0, 0), 0.0);
        assert_eq!(s.eg.get(0, 0), 0.0);
    }

    #[test]
    fn early_stopping_patience_two() {
        let mut es = EarlyStopping::new(2);
        let valid = [5.0, 4.0, 4.5, 4.8, 5.1, 5.3];
        let mut halted = None;
        for (i, &v) in valid.iter().enumerate() {
            if es.observe(i + 1, v) == Verdict::Stop {
                halted = Some(i + 1);
                break;
            }
        }
        assert_eq!(halted, Some(5));
        assert_eq!(es.best(), Some((2, 4.0)));
    }

    #[test]
    fn early_stopping_resets_on_improvement() {
        let mut es = EarlyStopping::new(1);
        assert_eq!(es.observe(1, 3.0), Verdict::Improved);
        assert_eq!(es.observe(2, 3.0), Verdict::NoImprovement);
        assert_eq!(es.observe(3, 2.0), Verdict::Improved);
        assert_eq!(es.observe(4, 2.5), Verdict::NoImprovement);
        assert_eq!(es.observe(5, 2.5), Verdict::Stop);
    }

    fn tiny_spec(variant: Variant, v: usize) -> ModelSpec {
        ModelSpec {
            variant,
            dims: ModelDims {
                vocab_size: v,
                d_emb: 5,
                d_h: 6,
                d_ctx: 4,
                d_att: 3,
            },
        }
    }

    fn docs() -> Vec<Document> {
        let s = |t: &[u32]| Sentence::new(t.to_vec());
        vec![
            Document {
                sentences: vec![s(&[2, 3, 4]), s(&[5, 6, 7, 8, 9, 2, 3]), s(&[4, 4])],
            },
            Document {
                sentences: vec![s(&[7]), s(&[2, 9, 9, 3])],
            },
        ]
    }

    #[test]
    fn batch_gradient_is_the_mean() {
        let m: Model<f64> = Model::new(tiny_spec(Variant::BowLf, 10), &mut epoch_rng(3, 0)).unwrap();
        let d = docs();
        let w = all_windows(&d, 2);
        let (one, g1) = gradient_batch(&m, &w[1..2]).unwrap();
        assert_eq!(one, m.sentence_nll(w[1]).unwrap());
        let (dup, g2) = gradient_batch(&m, &[w[1], w[1]]).unwrap();
        assert!((dup - one).abs() < 1e-12);
        for (a, b) in g1.iter().zip(g2.iter()) {
            for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
                assert!((x - y).abs() < 1e-12);
            }
        }
        let (mean, _) = gradient_batch(&m, &w).unwrap();
        let want: f64 = w.iter().map(|&x| m.sentence_nll(x).unwrap()).sum::<f64>() / w.len() as f64;
        assert!((mean - want).abs() < 1e-12);
    }

    #[test]
    fn batched_lengths_do_not_interact() {
        let m: Model<f64> = Model::new(tiny_spec(Variant::SeqBowAttEf, 10), &mut epoch_rng(4, 0)).unwrap();
        let a = Sentence::new(vec![2, 3]);
        let b = Sentence::new(vec![4, 5, 6, 7, 8, 9]);
        let ctx = [Sentence::new(vec![3, 3, 5])];
        let wa = ContextWindow::new(&a, &ctx);
        let wb = ContextWindow::new(&b, &ctx);
        let batched = window_nlls(&m, &[wa, wb]).unwrap();
        assert!((batched[0] - m.sentence_nll(wa).unwrap()).abs() < 1e-9);
        assert!((batched[1] - m.sentence_nll(wb).unwrap()).abs() < 1e-9);
    }

    #[test]
    fn batches_cover_every_window_once() {
        let d = docs();
        let w = all_windows(&d, 1);
        let b = make_batches(&w, 2, &mut epoch_rng(1, 1));
        let mut seen: Vec<usize> = b.iter().flatten().copied().collect();
        seen.sort_unstable();
        assert_eq!(seen, (0..w.len()).collect::<Vec<_>>());
        assert!(b.iter().all(|x| x.len() <= 2));
        assert_eq!(b, make_batches(&w, 2, &mut epoch_rng(1, 1)));
    }

    fn tiny_config(variant: Variant) -> TrainConfig {
        TrainConfig {
            variant,
            n: 2,
            d_h: 8,
            d_emb: 8,
            d_ctx: 6,
            vocab_size: 20,
            batch_size: 2,
            max_epochs: 3,
            patience: 2,
            seed: 11,
            ..TrainConfig::default()
        }
    }

    fn corpus(text: &str, vocab: &Vocabulary) -> Vec<Document> {
        vocab.encode_documents(&parse_corpus(text))
    }

    #[test]
    fn training_is_deterministic() {
        let text = "a b c\nb c d\n\nc d a\na a b\nd\n";
        let raw = parse_corpus(text);
        let vocab = crate::corpus::build_vocabulary(&raw, 20).unwrap();
        let d = corpus(text, &vocab);
        let cfg = tiny_config(Variant::SeqBowLf);
        let run = || train::<f64>(&cfg, &vocab, &d, &d, |_| {}).unwrap();
        let (a, b) = (run(), run());
        assert_eq!(a.history.len(), 3);
        assert_eq!(
            a.history.iter().map(|r| r.csv_line(false)).collect::<Vec<_>>(),
            b.history.iter().map(|r| r.csv_line(false)).collect::<Vec<_>>()
        );
        assert_eq!(a.best.model().unwrap().checksum(), b.best.model().unwrap().checksum());
    }

    #[test]
    fn repeated_sentence_training_nll_decreases() {
        let text = "a a a\na a a\na a a\n";
        let raw = parse_corpus(text);
        let vocab = crate::corpus::build_vocabulary(&raw, 10).unwrap();
        let d = corpus(text, &vocab);
        let cfg = TrainConfig {
            max_epochs: 6,
            batch_size: 1,
            ..tiny_config(Variant::Rlm)
        };
        let out = train::<f64>(&cfg, &vocab, &d, &d, |_| {}).unwrap();
        let nll: Vec<f64> = out.history.iter().map(|r| r.train_nll).collect();
        assert!(nll.len() >= 5);
        for w in nll[..5].windows(2) {
            assert!(w[1] < w[0], "{nll:?}");
        }
    }

    #[test]
    fn best_checkpoint_tracks_validation() {
        let text = "a b\nb a\n\nb b a\n";
        let raw = parse_corpus(text);
        let vocab = crate::corpus::build_vocabulary(&raw, 10).unwrap();
        let d = corpus(text, &vocab);
        let out = train::<f64>(&tiny_config(Variant::BowEf), &vocab, &d, &d, |_| {}).unwrap();
        let best = out
            .history
            .iter()
            .min_by(|a, b| a.valid_nll.partial_cmp(&b.valid_nll).unwrap())
            .unwrap();
        assert_eq!(out.best.epoch, best.epoch);
        assert_eq!(out.best.best_valid_nll, best.valid_nll);
        let windows = all_windows(&d, 2);
        let again = mean_sentence_nll(&out.best.model().unwrap(), &windows).unwrap();
        assert_eq!(again, best.valid_nll);
    }

    #[test]
    fn empty_training_corpus_is_a_data_error() {
        let vocab = Vocabulary::reserved();
        let err = train::<f64>(&tiny_config(Variant::Rlm), &vocab, &[], &docs(), |_| {}).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }
}
