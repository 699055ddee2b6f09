use std::f64::consts::LN_2;

use crate::autodiff::{Graph, Mode};
use crate::error::{Error, IntegrityError, Result};
use crate::rng::SeededRng;
use crate::tensor::Real;

use super::checkpoint::Checkpoint;
use super::model::LanguageModel;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalReport {
    /// Number of predicted positions.
    pub tokens: usize,
    pub mean_nats: f64,
    pub perplexity: f64,
    /// Bits per token; bits per character for character vocabularies.
    pub bpc: f64,
}

impl EvalReport {
    pub fn from_mean_nats(tokens: usize, mean_nats: f64) -> Self {
        EvalReport {
            tokens,
            mean_nats,
            perplexity: mean_nats.exp(),
            bpc: mean_nats / LN_2,
        }
    }
}

/// Mean cross-entropy of predicting `ids[k+1]` from `ids[..=k]` over the
/// whole stream. One stream, state carried across chunks of `chunk`
/// positions, no dropout.
pub fn evaluate_ids<T: Real>(model: &LanguageModel<T>, ids: &[usize], chunk: usize) -> Result<EvalReport> {
    if ids.len() < 2 {
        return Err(Error::Ingestion(format!(
            "evaluation needs at least 2 tokens, got {}",
            ids.len()
        )));
    }
    if chunk == 0 {
        return Err(Error::config("evaluation chunk length must be positive"));
    }
    let mut states = model.stack().zero_states::<T>(1);
    let mut rng = SeededRng::new(0);
    let predicted = ids.len() - 1;
    let mut total = 0.0;
    let mut start = 0;
    while start < predicted {
        let len = chunk.min(predicted - start);
        let inputs: Vec<Vec<usize>> = (0..len).map(|t| vec![ids[start + t]]).collect();
        let targets = &ids[start + 1..start + len + 1];
        let mut g = Graph::new();
        let fwd = model.forward(&mut g, &inputs, targets, &states, 0.0, Mode::Eval, &mut rng, false)?;
        total += g.value(fwd.loss).data()[0].as_f64() * len as f64;
        states = fwd.final_states.iter().map(|s| s.to_state(&g)).collect();
        start += len;
    }
    Ok(EvalReport::from_mean_nats(predicted, total / predicted as f64))
}

/// Evaluates a checkpoint on `text`. `expected_digest`, when given, must
/// match the checkpoint's vocabulary.
pub fn evaluate<T: Real>(checkpoint: &Checkpoint<T>, text: &str, expected_digest: Option<&str>) -> Result<EvalReport> {
    let digest = checkpoint.vocab.digest();
    if let Some(expected) = expected_digest {
        if expected != digest {
            return Err(IntegrityError::Digest {
                expected: expected.to_string(),
                found: digest,
            }
            .into());
        }
    }
    let ids = checkpoint.vocab.encode(text)?;
    evaluate_ids(&checkpoint.model, &ids, checkpoint.config.bptt_length)
}
