use std::fs;
use std::path::Path;
use std::time::Instant;

use crate::autodiff::{Graph, Mode};
use crate::error::{Error, Result};
use crate::optim::sgd_step;
use crate::rng::SeededRng;
use crate::tensor::Real;

use super::batch::BatchStream;
use super::checkpoint::Checkpoint;
use super::config::TrainConfig;
use super::eval::evaluate_ids;
use super::metrics::EpochMetrics;
use super::model::LanguageModel;
use super::vocab::Vocabulary;

pub fn read_corpus(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::Ingestion(format!("cannot read corpus {}: {e}", path.display())))?;
    String::from_utf8(bytes).map_err(|e| Error::Ingestion(format!("corpus {} is not UTF-8: {e}", path.display())))
}

/// Epoch-by-epoch training. All state lives in the [`Checkpoint`], so a
/// trainer rebuilt from a saved checkpoint continues exactly where the
/// original left off.
pub struct Trainer<T: Real = f64> {
    pub state: Checkpoint<T>,
    train_ids: Vec<usize>,
    valid_ids: Vec<usize>,
}

pub struct TrainOutcome<T: Real = f64> {
    pub checkpoint: Checkpoint<T>,
    pub metrics: Vec<EpochMetrics>,
}

impl<T: Real> Trainer<T> {
    /// Fresh model: the vocabulary comes from the training text, parameters
    /// from the config's seed.
    pub fn new(config: &TrainConfig, train_text: &str, valid_text: &str) -> Result<Self> {
        if config.precision != T::PRECISION {
            return Err(Error::config(format!(
                "config asks for {} but the trainer runs at {}",
                config.precision,
                T::PRECISION
            )));
        }
        config.validate()?;
        let vocab = Vocabulary::build(train_text, config.token_mode, config.max_vocab)?;
        let mut rng = SeededRng::new(config.seed_or_default());
        let model = LanguageModel::init(
            config.stack()?,
            vocab.len(),
            config.init_scale,
            config.forget_bias,
            &mut rng,
        )?;
        let state = Checkpoint {
            config: config.clone(),
            vocab,
            model,
            lr: config.lr_initial,
            epochs_completed: 0,
            rng,
        };
        Self::resume(state, train_text, valid_text)
    }

    pub fn resume(state: Checkpoint<T>, train_text: &str, valid_text: &str) -> Result<Self> {
        let train_ids = state.vocab.encode(train_text)?;
        let valid_ids = state.vocab.encode(valid_text)?;
        BatchStream::new(&train_ids, state.config.batch_size, state.config.bptt_length)?;
        if valid_ids.len() < 2 {
            return Err(Error::Ingestion("validation corpus needs at least 2 tokens".into()));
        }
        Ok(Trainer {
            state,
            train_ids,
            valid_ids,
        })
    }

    pub fn is_finished(&self) -> bool {
        self.state.epochs_completed >= self.state.config.max_epochs
    }

    /// Trains one epoch and evaluates on the validation stream. On a
    /// non-finite value the state is rolled back to the start of the epoch
    /// and returned inside [`Error::NumericAbort`].
    pub fn run_epoch(&mut self) -> Result<EpochMetrics> {
        let started = Instant::now();
        let epoch = self.state.epochs_completed + 1;
        let config = &self.state.config;
        let lr = config.lr_at(epoch);
        let (batch, bptt, dropout, clip) = (
            config.batch_size,
            config.bptt_length,
            config.dropout_rate,
            config.clip_norm,
        );
        let last_good = self.state.clone();

        let stream = BatchStream::new(&self.train_ids, batch, bptt)?;
        let stack = self.state.model.stack().clone();
        let mut carried = stack.zero_states::<T>(batch);
        let mut total = 0.0;
        let mut count = 0usize;
        for (k, block) in stream.enumerate() {
            if block.epoch_start {
                carried = stack.zero_states(batch);
            }
            let inputs: Vec<Vec<usize>> = (0..block.len()).map(|t| block.inputs_at(t)).collect();
            let targets = block.targets_time_major();
            let outcome = (|| -> Result<(f64, Vec<_>)> {
                let mut g = Graph::new();
                let fwd = self.state.model.forward(
                    &mut g,
                    &inputs,
                    &targets,
                    &carried,
                    dropout,
                    Mode::Train,
                    &mut self.state.rng,
                    true,
                )?;
                let loss = g.value(fwd.loss).data()[0].as_f64();
                let grads = g.backward(fwd.loss)?.parameters();
                let mut params = self.state.model.tensors_mut();
                sgd_step(&mut params, &grads, lr, clip)?;
                let next = fwd.final_states.iter().map(|s| s.to_state(&g)).collect();
                Ok((loss, next))
            })();
            match outcome {
                Ok((loss, next)) => {
                    total += loss * targets.len() as f64;
                    count += targets.len();
                    carried = next;
                }
                Err(Error::NonFinite { op }) => {
                    self.state = last_good.clone();
                    return Err(Error::NumericAbort {
                        epoch,
                        block: k + 1,
                        diagnostic: format!("non-finite value in {op}"),
                        last_good: Some(Box::new(last_good.into_any())),
                    });
                }
                Err(e) => return Err(e),
            }
        }
        if self.state.model.named_tensors().iter().any(|(_, t)| !t.is_finite()) {
            self.state = last_good.clone();
            return Err(Error::NumericAbort {
                epoch,
                block: count / (batch * bptt),
                diagnostic: "parameters became non-finite".into(),
                last_good: Some(Box::new(last_good.into_any())),
            });
        }
        let valid = evaluate_ids(&self.state.model, &self.valid_ids, bptt)?;
        self.state.epochs_completed = epoch;
        self.state.lr = lr;
        let wall = started.elapsed().as_secs_f64();
        Ok(EpochMetrics {
            epoch,
            lr,
            train_nats: total / count as f64,
            valid_nats: valid.mean_nats,
            valid_ppl: valid.perplexity,
            valid_bpc: valid.bpc,
            wall_seconds: self.state.config.log_wall_time.then_some(wall),
        })
    }

    /// Loss of the first training block without updating anything.
    pub fn first_block_loss(&self) -> Result<f64> {
        let config = &self.state.config;
        let mut stream = BatchStream::new(&self.train_ids, config.batch_size, config.bptt_length)?;
        let block = stream.next().expect("stream has at least one block");
        let inputs: Vec<Vec<usize>> = (0..block.len()).map(|t| block.inputs_at(t)).collect();
        let mut g = Graph::new();
        let states = self.state.model.stack().zero_states::<T>(config.batch_size);
        let mut rng = SeededRng::new(0);
        let fwd = self.state.model.forward(
            &mut g,
            &inputs,
            &block.targets_time_major(),
            &states,
            0.0,
            Mode::Eval,
            &mut rng,
            false,
        )?;
        Ok(g.value(fwd.loss).data()[0].as_f64())
    }

    pub fn valid_ids(&self) -> &[usize] {
        &self.valid_ids
    }

    pub fn train_ids(&self) -> &[usize] {
        &self.train_ids
    }

    pub fn into_checkpoint(self) -> Checkpoint<T> {
        self.state
    }
}

/// Trains for `config.max_epochs` epochs.
pub fn train<T: Real>(config: &TrainConfig, train_text: &str, valid_text: &str) -> Result<TrainOutcome<T>> {
    let mut trainer = Trainer::<T>::new(config, train_text, valid_text)?;
    let mut metrics = Vec::new();
    while !trainer.is_finished() {
        metrics.push(trainer.run_epoch()?);
    }
    Ok(TrainOutcome {
        checkpoint: trainer.into_checkpoint(),
        metrics,
    })
}

/// [`train`] reading both corpora from disk.
pub fn train_from_paths<T: Real>(
    config: &TrainConfig,
    train_path: &Path,
    valid_path: &Path,
) -> Result<TrainOutcome<T>> {
    let train_text = read_corpus(train_path)?;
    let valid_text = read_corpus(valid_path)?;
    train(config, &train_text, &valid_text)
}
