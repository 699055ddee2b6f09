use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Mode, Var};
use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::tensor::{Real, Tensor};

use super::step::{unroll_graph, BoundCell, StateVars, TraceVars};
use super::{
    count_parameters, init_parameters, CellConfig, CellKind, CellParameters, CellState, OutputActivation, StepTrace,
};

/// Layers applied in sequence, each consuming the previous layer's outputs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stack {
    layers: Vec<CellConfig>,
}

pub struct StackRun<T: Real = f64> {
    pub outputs: Vec<Tensor<T>>,
    /// `traces[layer][t]`
    pub traces: Vec<Vec<StepTrace<T>>>,
    pub final_states: Vec<CellState<T>>,
}

/// Graph handles produced by [`Stack::unroll_graph`].
pub struct StackVars {
    pub outputs: Vec<Var>,
    pub traces: Vec<Vec<TraceVars>>,
    pub final_states: Vec<StateVars>,
}

impl Stack {
    pub fn new(layers: Vec<CellConfig>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::config("a stack needs at least one layer"));
        }
        for (l, cfg) in layers.iter().enumerate() {
            cfg.validate()?;
            if l > 0 {
                let prev = layers[l - 1].output_dim();
                if cfg.input_dim != prev {
                    return Err(Error::config(format!(
                        "layer {l} expects input dim {} but layer {} emits {prev}",
                        cfg.input_dim,
                        l - 1
                    )));
                }
            }
        }
        Ok(Stack { layers })
    }

    /// `depth` layers of the same kind and width over an `input_dim` input.
    pub fn uniform(
        kind: CellKind,
        input_dim: usize,
        hidden_dim: usize,
        depth: usize,
        activation: OutputActivation,
        projection: Option<usize>,
    ) -> Result<Self> {
        let mut layers = Vec::with_capacity(depth);
        let mut input = input_dim;
        for _ in 0..depth {
            let mut cfg = CellConfig::new(kind, input, hidden_dim).with_activation(activation);
            cfg.projection = projection;
            input = cfg.output_dim();
            layers.push(cfg);
        }
        Stack::new(layers)
    }

    /// Layers with individual widths, e.g. `128 → [1024, 1024, 2048]`.
    pub fn with_widths(
        kind: CellKind,
        input_dim: usize,
        widths: &[usize],
        activation: OutputActivation,
    ) -> Result<Self> {
        let mut layers = Vec::with_capacity(widths.len());
        let mut input = input_dim;
        for &w in widths {
            let cfg = CellConfig::new(kind, input, w).with_activation(activation);
            input = cfg.output_dim();
            layers.push(cfg);
        }
        Stack::new(layers)
    }

    pub fn layers(&self) -> &[CellConfig] {
        &self.layers
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].output_dim()
    }

    pub fn count_parameters(&self, include_biases: bool) -> Result<u64> {
        self.layers.iter().map(|l| count_parameters(l, include_biases)).sum()
    }

    pub fn init_parameters<T: Real>(
        &self,
        scale: f64,
        forget_bias: f64,
        rng: &mut SeededRng,
    ) -> Result<Vec<CellParameters<T>>> {
        self.layers
            .iter()
            .map(|l| init_parameters(l, scale, forget_bias, rng))
            .collect()
    }

    pub fn zero_states<T: Real>(&self, batch: usize) -> Vec<CellState<T>> {
        self.layers.iter().map(|l| CellState::zeros(l, batch)).collect()
    }

    /// Dropout goes on the stack input, between layers, and on the top
    /// output, once per connection.
    #[allow(clippy::too_many_arguments)]
    pub fn unroll_graph<T: Real>(
        &self,
        g: &mut Graph<T>,
        cells: &[BoundCell],
        initial: Vec<StateVars>,
        xs: &[Var],
        dropout_rate: f64,
        mode: Mode,
        rng: &mut SeededRng,
    ) -> Result<StackVars> {
        if cells.len() != self.layers.len() || initial.len() != self.layers.len() {
            return Err(Error::contract(format!(
                "stack of {} layers given {} cells and {} states",
                self.layers.len(),
                cells.len(),
                initial.len()
            )));
        }
        let mut inputs = xs.to_vec();
        let mut traces = Vec::with_capacity(cells.len());
        let mut finals = Vec::with_capacity(cells.len());
        for (l, (cell, state)) in cells.iter().zip(initial).enumerate() {
            let input_dropout = if l == 0 { dropout_rate } else { 0.0 };
            let (outs, tr, last) = unroll_graph(g, cell, state, &inputs, input_dropout, dropout_rate, mode, rng)?;
            inputs = outs;
            traces.push(tr);
            finals.push(last);
        }
        Ok(StackVars {
            outputs: inputs,
            traces,
            final_states: finals,
        })
    }

    pub fn unroll<T: Real>(
        &self,
        params: &[CellParameters<T>],
        xs: &[Tensor<T>],
        initial: Option<&[CellState<T>]>,
        dropout_rate: f64,
        mode: Mode,
        rng: &mut SeededRng,
    ) -> Result<StackRun<T>> {
        let batch = xs
            .first()
            .ok_or_else(|| Error::contract("unroll needs a nonempty sequence"))?
            .rows();
        if params.len() != self.layers.len() {
            return Err(Error::contract(format!(
                "stack of {} layers given {} parameter sets",
                self.layers.len(),
                params.len()
            )));
        }
        let mut g = Graph::new();
        let cells = self
            .layers
            .iter()
            .zip(params)
            .map(|(cfg, p)| BoundCell::bind_constants(&mut g, cfg, p))
            .collect::<Result<Vec<_>>>()?;
        let zero;
        let initial = match initial {
            Some(s) => s,
            None => {
                zero = self.zero_states(batch);
                &zero[..]
            }
        };
        let states = initial
            .iter()
            .map(|s| StateVars::constant(&mut g, s))
            .collect::<Result<Vec<_>>>()?;
        let xv = xs.iter().map(|x| g.constant(x.clone())).collect::<Result<Vec<_>>>()?;
        let run = self.unroll_graph(&mut g, &cells, states, &xv, dropout_rate, mode, rng)?;
        Ok(StackRun {
            outputs: run.outputs.iter().map(|&o| g.value(o).clone()).collect(),
            traces: run
                .traces
                .iter()
                .zip(&self.layers)
                .map(|(tr, cfg)| tr.iter().map(|t| t.to_trace(&g, cfg.kind.gates_coupled())).collect())
                .collect(),
            final_states: run.final_states.iter().map(|s| s.to_state(&g)).collect(),
        })
    }
}
