use crate::autodiff::{Graph, Mode, Var};
use crate::cells::{parameter_specs, BoundCell, CellParameters, CellState, Stack, StateVars, StepTrace, TraceVars};
use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::tensor::{Real, Tensor};

/// Embedding lookup, a cell stack, and a full softmax over the vocabulary.
/// Embedding and softmax weights are separate matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct LanguageModel<T: Real = f64> {
    stack: Stack,
    /// `V × embedding_dim`
    pub embedding: Tensor<T>,
    pub layers: Vec<CellParameters<T>>,
    /// `V × top_output_dim`
    pub softmax_w: Tensor<T>,
    /// `1 × V`
    pub softmax_b: Tensor<T>,
}

/// Graph handles of one forward pass.
pub struct Forward {
    pub loss: Var,
    /// Outputs of the top layer, one `B × d` node per position.
    pub outputs: Vec<Var>,
    pub traces: Vec<Vec<TraceVars>>,
    pub final_states: Vec<StateVars>,
}

fn uniform<T: Real>(rows: usize, cols: usize, scale: f64, rng: &mut SeededRng) -> Tensor<T> {
    let data = (0..rows * cols).map(|_| T::of(rng.uniform(-scale, scale))).collect();
    Tensor::from_vec_unchecked(rows, cols, data)
}

impl<T: Real> LanguageModel<T> {
    /// Draws embedding, cell, and softmax weights in that order from `rng`.
    pub fn init(
        stack: Stack,
        vocab_size: usize,
        init_scale: f64,
        forget_bias: f64,
        rng: &mut SeededRng,
    ) -> Result<Self> {
        if vocab_size == 0 {
            return Err(Error::config("vocabulary is empty"));
        }
        let embedding = uniform(vocab_size, stack.input_dim(), init_scale, rng);
        let layers = stack.init_parameters(init_scale, forget_bias, rng)?;
        let softmax_w = uniform(vocab_size, stack.output_dim(), init_scale, rng);
        let softmax_b = Tensor::zeros(1, vocab_size);
        Ok(LanguageModel {
            stack,
            embedding,
            layers,
            softmax_w,
            softmax_b,
        })
    }

    pub fn stack(&self) -> &Stack {
        &self.stack
    }

    pub fn vocab_size(&self) -> usize {
        self.embedding.rows()
    }

    /// Every tensor with its checkpoint name, in a fixed order: `embedding`,
    /// `layer{l}.{name}`, `softmax.w`, `softmax.b`.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = vec![("embedding".to_string(), &self.embedding)];
        for (l, p) in self.layers.iter().enumerate() {
            out.extend(p.iter().map(|(n, t)| (format!("layer{l}.{n}"), t)));
        }
        out.push(("softmax.w".to_string(), &self.softmax_w));
        out.push(("softmax.b".to_string(), &self.softmax_b));
        out
    }

    /// Same order as [`LanguageModel::named_tensors`].
    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out = vec![&mut self.embedding];
        for p in &mut self.layers {
            out.extend(p.tensors_mut());
        }
        out.push(&mut self.softmax_w);
        out.push(&mut self.softmax_b);
        out
    }

    pub fn scalar_count(&self) -> usize {
        self.named_tensors().iter().map(|(_, t)| t.len()).sum()
    }

    /// Reassembles a model from named tensors, checking names and shapes.
    pub fn from_named(stack: Stack, vocab_size: usize, named: Vec<(String, Tensor<T>)>) -> Result<Self> {
        let mut named: Vec<Option<(String, Tensor<T>)>> = named.into_iter().map(Some).collect();
        let mut take = |name: &str, shape: Option<(usize, usize)>| -> Result<Tensor<T>> {
            let slot = named
                .iter_mut()
                .find(|e| e.as_ref().is_some_and(|(n, _)| n == name))
                .ok_or_else(|| Error::config(format!("missing tensor `{name}`")))?;
            let (_, t) = slot.take().expect("matched above");
            if let Some(s) = shape {
                if t.shape() != s {
                    return Err(Error::Dimension {
                        op: "LanguageModel::from_named",
                        left: s,
                        right: t.shape(),
                    });
                }
            }
            Ok(t)
        };
        let embedding = take("embedding", Some((vocab_size, stack.input_dim())))?;
        let mut layers = Vec::with_capacity(stack.depth());
        for (l, cfg) in stack.layers().iter().enumerate() {
            let specs = parameter_specs(cfg)?;
            let mut parts = Vec::with_capacity(specs.len());
            for spec in &specs {
                parts.push((spec.name.to_string(), take(&format!("layer{l}.{}", spec.name), None)?));
            }
            layers.push(CellParameters::from_named(cfg, parts)?);
        }
        let softmax_w = take("softmax.w", Some((vocab_size, stack.output_dim())))?;
        let softmax_b = take("softmax.b", Some((1, vocab_size)))?;
        if let Some((extra, _)) = named.into_iter().flatten().next() {
            return Err(Error::config(format!("unexpected tensor `{extra}`")));
        }
        Ok(LanguageModel {
            stack,
            embedding,
            layers,
            softmax_w,
            softmax_b,
        })
    }

    /// Builds the loss of one block. `inputs[t]` holds the ids of every
    /// stream at position `t`; `targets` is time-major (`t·B + b`).
    /// The incoming states enter as constants, so no gradient crosses the
    /// block boundary. With `trainable` the tensors are registered as
    /// parameters in [`LanguageModel::named_tensors`] order.
    #[allow(clippy::too_many_arguments)]
    pub fn forward(
        &self,
        g: &mut Graph<T>,
        inputs: &[Vec<usize>],
        targets: &[usize],
        states: &[CellState<T>],
        dropout_rate: f64,
        mode: Mode,
        rng: &mut SeededRng,
        trainable: bool,
    ) -> Result<Forward> {
        let bind = |g: &mut Graph<T>, t: &Tensor<T>| {
            if trainable {
                g.parameter(t.clone())
            } else {
                g.constant(t.clone())
            }
        };
        let table = bind(g, &self.embedding)?;
        let cells = self
            .stack
            .layers()
            .iter()
            .zip(&self.layers)
            .map(|(cfg, p)| {
                if trainable {
                    BoundCell::bind_parameters(g, cfg, p)
                } else {
                    BoundCell::bind_constants(g, cfg, p)
                }
            })
            .collect::<Result<Vec<_>>>()?;
        let w = bind(g, &self.softmax_w)?;
        let b = bind(g, &self.softmax_b)?;

        let initial = states
            .iter()
            .map(|s| StateVars::constant(g, s))
            .collect::<Result<Vec<_>>>()?;
        let xs = inputs
            .iter()
            .map(|ids| g.gather_rows(table, ids))
            .collect::<Result<Vec<_>>>()?;
        let run = self
            .stack
            .unroll_graph(g, &cells, initial, &xs, dropout_rate, mode, rng)?;
        let stacked = g.concat_rows(&run.outputs)?;
        let logits = g.matmul_nt(stacked, w)?;
        let logits = g.add(logits, b)?;
        let loss = g.softmax_cross_entropy(logits, targets)?;
        Ok(Forward {
            loss,
            outputs: run.outputs,
            traces: run.traces,
            final_states: run.final_states,
        })
    }

    /// Gate traces of every layer (`[layer][t]`) over one sequence from the
    /// zero state, without dropout.
    pub fn trace(&self, ids: &[usize]) -> Result<Vec<Vec<StepTrace<T>>>> {
        let xs = ids
            .iter()
            .map(|&id| {
                if id >= self.vocab_size() {
                    return Err(Error::Index {
                        op: "trace",
                        index: id,
                        bound: self.vocab_size(),
                    });
                }
                Ok(Tensor::from_vec_unchecked(
                    1,
                    self.embedding.cols(),
                    self.embedding.row(id).to_vec(),
                ))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut rng = SeededRng::new(0);
        Ok(self
            .stack
            .unroll(&self.layers, &xs, None, 0.0, Mode::Eval, &mut rng)?
            .traces)
    }
}
