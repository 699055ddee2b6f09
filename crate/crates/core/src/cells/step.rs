use crate::autodiff::{Graph, Mode, Unary, Var};
use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::tensor::{Real, Tensor};

use super::{parameter_specs, CellConfig, CellKind, CellParameters, CellState, OutputActivation, ParamSpec, StepTrace};

/// A cell's parameters placed on a graph.
#[derive(Debug, Clone)]
pub struct BoundCell {
    pub config: CellConfig,
    vars: Vec<(&'static str, Var)>,
}

impl BoundCell {
    /// Registers every tensor as a trainable parameter, in spec order.
    pub fn bind_parameters<T: Real>(g: &mut Graph<T>, config: &CellConfig, params: &CellParameters<T>) -> Result<Self> {
        Self::bind(g, config, params, true)
    }

    /// Places the tensors on the graph as constants.
    pub fn bind_constants<T: Real>(g: &mut Graph<T>, config: &CellConfig, params: &CellParameters<T>) -> Result<Self> {
        Self::bind(g, config, params, false)
    }

    fn bind<T: Real>(
        g: &mut Graph<T>,
        config: &CellConfig,
        params: &CellParameters<T>,
        trainable: bool,
    ) -> Result<Self> {
        let specs = parameter_specs(config)?;
        let mut vars = Vec::with_capacity(specs.len());
        for spec in specs {
            let t = params
                .get(spec.name)
                .ok_or_else(|| Error::config(format!("{}: missing parameter `{}`", config.kind, spec.name)))?;
            if t.shape() != (spec.rows, spec.cols) {
                return Err(Error::Dimension {
                    op: "bind",
                    left: (spec.rows, spec.cols),
                    right: t.shape(),
                });
            }
            let v = if trainable {
                g.parameter(t.clone())?
            } else {
                g.constant(t.clone())?
            };
            vars.push((spec.name, v));
        }
        Ok(BoundCell { config: *config, vars })
    }

    /// Uses nodes already on a graph as the cell's parameters, matched to
    /// `specs` by position.
    pub fn from_vars(config: &CellConfig, specs: &[ParamSpec], vars: &[Var]) -> Self {
        assert_eq!(specs.len(), vars.len(), "one node per parameter");
        BoundCell {
            config: *config,
            vars: specs.iter().zip(vars).map(|(s, &v)| (s.name, v)).collect(),
        }
    }

    pub fn var(&self, name: &str) -> Var {
        self.vars
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, v)| *v)
            .unwrap_or_else(|| panic!("{} has no parameter `{name}`", self.config.kind))
    }

    pub fn vars(&self) -> impl Iterator<Item = (&'static str, Var)> + '_ {
        self.vars.iter().copied()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StateVars {
    pub c: Var,
    pub h: Option<Var>,
}

impl StateVars {
    /// Places a state on the graph as constants; gradients do not flow past it.
    pub fn constant<T: Real>(g: &mut Graph<T>, state: &CellState<T>) -> Result<Self> {
        let c = g.constant(state.c.clone())?;
        let h = state.h.as_ref().map(|h| g.constant(h.clone())).transpose()?;
        Ok(StateVars { c, h })
    }

    pub fn output(&self, config: &CellConfig) -> Var {
        match (self.h, config.kind.emits_hidden()) {
            (Some(h), true) => h,
            _ => self.c,
        }
    }

    pub fn to_state<T: Real>(&self, g: &Graph<T>) -> CellState<T> {
        CellState {
            c: g.value(self.c).clone(),
            h: self.h.map(|h| g.value(h).clone()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TraceVars {
    pub input_gate: Var,
    pub forget_gate: Var,
    pub content: Var,
}

impl TraceVars {
    pub fn to_trace<T: Real>(&self, g: &Graph<T>, gates_coupled: bool) -> StepTrace<T> {
        StepTrace {
            input_gate: g.value(self.input_gate).clone(),
            forget_gate: g.value(self.forget_gate).clone(),
            content: g.value(self.content).clone(),
            gates_coupled,
        }
    }
}

fn affine<T: Real>(g: &mut Graph<T>, terms: &[(Var, Var)], bias: Option<Var>) -> Result<Var> {
    let (first, rest) = terms.split_first().expect("affine needs at least one term");
    let mut acc = g.matmul_nt(first.0, first.1)?;
    for &(input, weight) in rest {
        let t = g.matmul_nt(input, weight)?;
        acc = g.add(acc, t)?;
    }
    match bias {
        Some(b) => g.add(acc, b),
        None => Ok(acc),
    }
}

fn gate<T: Real>(g: &mut Graph<T>, terms: &[(Var, Var)], bias: Var) -> Result<Var> {
    let pre = affine(g, terms, Some(bias))?;
    g.sigmoid(pre)
}

/// `i ∘ content + f ∘ c_prev`
fn mix<T: Real>(g: &mut Graph<T>, i: Var, content: Var, f: Var, c_prev: Var) -> Result<Var> {
    let a = g.hadamard(i, content)?;
    let b = g.hadamard(f, c_prev)?;
    g.add(a, b)
}

fn activation(g: OutputActivation) -> Unary {
    match g {
        OutputActivation::Tanh => Unary::Tanh,
        OutputActivation::Identity => Unary::Identity,
    }
}

fn project<T: Real>(g: &mut Graph<T>, cell: &BoundCell, out: Var) -> Result<Var> {
    match cell.config.projection {
        Some(_) => g.matmul_nt(out, cell.var("w_proj")),
        None => Ok(out),
    }
}

fn check_shapes<T: Real>(g: &Graph<T>, config: &CellConfig, state: &StateVars, x: Var) -> Result<()> {
    let (batch, cols) = g.value(x).shape();
    if cols != config.input_dim {
        return Err(Error::Dimension {
            op: "step input",
            left: (batch, config.input_dim),
            right: (batch, cols),
        });
    }
    let c = g.value(state.c).shape();
    if c != (batch, config.hidden_dim) {
        return Err(Error::Dimension {
            op: "step state c",
            left: (batch, config.hidden_dim),
            right: c,
        });
    }
    match (config.kind.has_hidden_state(), state.h) {
        (true, Some(h)) => {
            let h = g.value(h).shape();
            if h != (batch, config.recurrent_dim()) {
                return Err(Error::Dimension {
                    op: "step state h",
                    left: (batch, config.recurrent_dim()),
                    right: h,
                });
            }
        }
        (true, None) => return Err(Error::contract(format!("{} needs h_(t-1) in its state", config.kind))),
        (false, _) => {}
    }
    Ok(())
}

/// One time step on a graph. Returns the new state and the recorded gates.
pub fn step_graph<T: Real>(
    g: &mut Graph<T>,
    cell: &BoundCell,
    state: &StateVars,
    x: Var,
) -> Result<(StateVars, TraceVars)> {
    let config = &cell.config;
    config.validate()?;
    check_shapes(g, config, state, x)?;
    match config.kind {
        CellKind::RanGeneral => ran_general(g, cell, state, x),
        CellKind::RanSimplified => ran_simplified(g, cell, state, x),
        CellKind::Lstm => lstm_family(g, cell, state, x, true, false),
        CellKind::LstmNoOutputGate => lstm_family(g, cell, state, x, false, false),
        CellKind::LstmLinearContent => lstm_family(g, cell, state, x, false, true),
        CellKind::GruStandard => gru_standard(g, cell, state, x),
        CellKind::GruAlternate => gru_alternate(g, cell, state, x),
        CellKind::GruDerivedRan => gru_derived_ran(g, cell, state, x),
    }
}

fn ran_general<T: Real>(
    g: &mut Graph<T>,
    cell: &BoundCell,
    state: &StateVars,
    x: Var,
) -> Result<(StateVars, TraceVars)> {
    let h_prev = state.h.expect("checked");
    let content = g.matmul_nt(x, cell.var("w_cx"))?;
    let i = gate(g, &[(h_prev, cell.var("w_ih")), (x, cell.var("w_ix"))], cell.var("b_i"))?;
    let f = gate(g, &[(h_prev, cell.var("w_fh")), (x, cell.var("w_fx"))], cell.var("b_f"))?;
    let c = mix(g, i, content, f, state.c)?;
    let out = g.unary(activation(cell.config.output_activation), c)?;
    let h = project(g, cell, out)?;
    Ok((
        StateVars { c, h: Some(h) },
        TraceVars {
            input_gate: i,
            forget_gate: f,
            content,
        },
    ))
}

fn ran_simplified<T: Real>(
    g: &mut Graph<T>,
    cell: &BoundCell,
    state: &StateVars,
    x: Var,
) -> Result<(StateVars, TraceVars)> {
    let c_prev = state.c;
    let i = gate(g, &[(c_prev, cell.var("w_ic")), (x, cell.var("w_ix"))], cell.var("b_i"))?;
    let f = gate(g, &[(c_prev, cell.var("w_fc")), (x, cell.var("w_fx"))], cell.var("b_f"))?;
    let c = mix(g, i, x, f, c_prev)?;
    Ok((
        StateVars { c, h: None },
        TraceVars {
            input_gate: i,
            forget_gate: f,
            content: x,
        },
    ))
}

/// The LSTM and its two ablations: with or without the output gate, and
/// with the recurrent `tanh` content layer or a linear projection of `x_t`.
fn lstm_family<T: Real>(
    g: &mut Graph<T>,
    cell: &BoundCell,
    state: &StateVars,
    x: Var,
    output_gate: bool,
    linear_content: bool,
) -> Result<(StateVars, TraceVars)> {
    let h_prev = state.h.expect("checked");
    let content = if linear_content {
        g.matmul_nt(x, cell.var("w_cx"))?
    } else {
        let pre = affine(
            g,
            &[(h_prev, cell.var("w_ch")), (x, cell.var("w_cx"))],
            Some(cell.var("b_c")),
        )?;
        g.tanh(pre)?
    };
    let i = gate(g, &[(h_prev, cell.var("w_ih")), (x, cell.var("w_ix"))], cell.var("b_i"))?;
    let f = gate(g, &[(h_prev, cell.var("w_fh")), (x, cell.var("w_fx"))], cell.var("b_f"))?;
    let c = mix(g, i, content, f, state.c)?;
    let out = if output_gate {
        let o = gate(g, &[(h_prev, cell.var("w_oh")), (x, cell.var("w_ox"))], cell.var("b_o"))?;
        let squashed = g.tanh(c)?;
        g.hadamard(o, squashed)?
    } else {
        g.unary(activation(cell.config.output_activation), c)?
    };
    let h = project(g, cell, out)?;
    Ok((
        StateVars { c, h: Some(h) },
        TraceVars {
            input_gate: i,
            forget_gate: f,
            content,
        },
    ))
}

fn gru_standard<T: Real>(
    g: &mut Graph<T>,
    cell: &BoundCell,
    state: &StateVars,
    x: Var,
) -> Result<(StateVars, TraceVars)> {
    // The GRU hidden state h_t lives in the `c` slot.
    let h_prev = state.c;
    let z = gate(g, &[(h_prev, cell.var("w_zh")), (x, cell.var("w_zx"))], cell.var("b_z"))?;
    let r = gate(g, &[(h_prev, cell.var("w_rh")), (x, cell.var("w_rx"))], cell.var("b_r"))?;
    let reset = g.hadamard(r, h_prev)?;
    let pre = affine(
        g,
        &[(reset, cell.var("w_hh")), (x, cell.var("w_hx"))],
        Some(cell.var("b_h")),
    )?;
    let candidate = g.tanh(pre)?;
    let keep = g.one_minus(z)?;
    let h = mix(g, z, candidate, keep, h_prev)?;
    Ok((
        StateVars { c: h, h: None },
        TraceVars {
            input_gate: z,
            forget_gate: keep,
            content: candidate,
        },
    ))
}

fn gru_alternate<T: Real>(
    g: &mut Graph<T>,
    cell: &BoundCell,
    state: &StateVars,
    x: Var,
) -> Result<(StateVars, TraceVars)> {
    let (c_prev, h_prev) = (state.c, state.h.expect("checked"));
    let pre = affine(
        g,
        &[(h_prev, cell.var("w_ch")), (x, cell.var("w_cx"))],
        Some(cell.var("b_c")),
    )?;
    let content = g.tanh(pre)?;
    let i = gate(g, &[(c_prev, cell.var("w_ic")), (x, cell.var("w_ix"))], cell.var("b_i"))?;
    let o = gate(g, &[(c_prev, cell.var("w_oc")), (x, cell.var("w_ox"))], cell.var("b_o"))?;
    let keep = g.one_minus(i)?;
    let c = mix(g, i, content, keep, c_prev)?;
    let h = g.hadamard(o, c)?;
    Ok((
        StateVars { c, h: Some(h) },
        TraceVars {
            input_gate: i,
            forget_gate: keep,
            content,
        },
    ))
}

fn gru_derived_ran<T: Real>(
    g: &mut Graph<T>,
    cell: &BoundCell,
    state: &StateVars,
    x: Var,
) -> Result<(StateVars, TraceVars)> {
    let c_prev = state.c;
    let content = g.matmul_nt(x, cell.var("w_cx"))?;
    let i = gate(g, &[(c_prev, cell.var("w_ic")), (x, cell.var("w_ix"))], cell.var("b_i"))?;
    let o = gate(g, &[(c_prev, cell.var("w_oc")), (x, cell.var("w_ox"))], cell.var("b_o"))?;
    let c = mix(g, i, content, o, c_prev)?;
    Ok((
        StateVars { c, h: None },
        TraceVars {
            input_gate: i,
            forget_gate: o,
            content,
        },
    ))
}

/// A single step outside any training graph.
pub fn step<T: Real>(
    config: &CellConfig,
    params: &CellParameters<T>,
    state: &CellState<T>,
    x: &Tensor<T>,
) -> Result<(CellState<T>, StepTrace<T>)> {
    let mut g = Graph::new();
    let cell = BoundCell::bind_constants(&mut g, config, params)?;
    let s = StateVars::constant(&mut g, state)?;
    let xv = g.constant(x.clone())?;
    let (next, trace) = step_graph(&mut g, &cell, &s, xv)?;
    Ok((next.to_state(&g), trace.to_trace(&g, config.kind.gates_coupled())))
}

pub struct Unrolled<T: Real = f64> {
    pub outputs: Vec<Tensor<T>>,
    pub traces: Vec<StepTrace<T>>,
    pub final_state: CellState<T>,
}

/// Folds `step_graph` over `xs`. Dropout touches only the non-recurrent
/// connections: each input before it enters the cell and each output after it
/// leaves.
#[allow(clippy::too_many_arguments)]
pub fn unroll_graph<T: Real>(
    g: &mut Graph<T>,
    cell: &BoundCell,
    initial: StateVars,
    xs: &[Var],
    input_dropout: f64,
    output_dropout: f64,
    mode: Mode,
    rng: &mut SeededRng,
) -> Result<(Vec<Var>, Vec<TraceVars>, StateVars)> {
    if xs.is_empty() {
        return Err(Error::contract("unroll needs a nonempty sequence"));
    }
    let mut state = initial;
    let mut outputs = Vec::with_capacity(xs.len());
    let mut traces = Vec::with_capacity(xs.len());
    for &x in xs {
        let x = g.dropout(x, input_dropout, mode, rng)?;
        let (next, trace) = step_graph(g, cell, &state, x)?;
        let out = next.output(&cell.config);
        outputs.push(g.dropout(out, output_dropout, mode, rng)?);
        traces.push(trace);
        state = next;
    }
    Ok((outputs, traces, state))
}

/// Runs a cell over a sequence. `initial` defaults to the zero state.
pub fn unroll<T: Real>(
    config: &CellConfig,
    params: &CellParameters<T>,
    xs: &[Tensor<T>],
    initial: Option<&CellState<T>>,
    dropout_rate: f64,
    mode: Mode,
    rng: &mut SeededRng,
) -> Result<Unrolled<T>> {
    let batch = xs
        .first()
        .ok_or_else(|| Error::contract("unroll needs a nonempty sequence"))?
        .rows();
    let zero;
    let initial = match initial {
        Some(s) => s,
        None => {
            zero = CellState::zeros(config, batch);
            &zero
        }
    };
    let mut g = Graph::new();
    let cell = BoundCell::bind_constants(&mut g, config, params)?;
    let s0 = StateVars::constant(&mut g, initial)?;
    let xv = xs.iter().map(|x| g.constant(x.clone())).collect::<Result<Vec<_>>>()?;
    let (outs, traces, last) = unroll_graph(&mut g, &cell, s0, &xv, dropout_rate, dropout_rate, mode, rng)?;
    let coupled = config.kind.gates_coupled();
    Ok(Unrolled {
        outputs: outs.iter().map(|&o| g.value(o).clone()).collect(),
        traces: traces.iter().map(|t| t.to_trace(&g, coupled)).collect(),
        final_state: last.to_state(&g),
    })
}
