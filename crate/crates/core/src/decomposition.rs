//! Weighted-sum decomposition of a recurrent state.
//!
//! Every cell here updates its state as `c_t = i_t ∘ c̃_t + f_t ∘ c_{t-1}`.
//! Unrolling the recurrence gives
//!
//! ```text
//! c_t = Σ_{j=1..t} w_j^t ∘ c̃_j  +  (Π_{k=1..t} f_k) ∘ c_0,
//! w_j^t = i_j ∘ Π_{k=j+1..t} f_k
//! ```
//!
//! so the state is a component-wise weighted sum of its content layers. For
//! the simplified RAN `c̃_j = x_j`, and the state is a weighted sum of the raw
//! inputs. The `c_0` term is kept explicit; it vanishes for a zero initial
//! state.

use serde::{Deserialize, Serialize};

use crate::cells::{unroll, CellConfig, CellKind, CellParameters, CellState, StepTrace};
use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::tensor::{Real, Tensor};
use crate::Mode;

/// What the weights multiply.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Basis {
    /// `x_j` itself.
    RawInputs,
    /// `W_cx · x_j`, for kinds with a linear content layer.
    ProjectedInputs,
    /// The content layer `c̃_j` recorded in the trace.
    ContentLayers,
}

impl Basis {
    /// The basis under which a kind's state is an exact weighted sum of
    /// something computed from the inputs alone, where one exists.
    pub fn natural_for(kind: CellKind) -> Basis {
        match kind {
            CellKind::RanSimplified => Basis::RawInputs,
            k if k.linear_content() => Basis::ProjectedInputs,
            _ => Basis::ContentLayers,
        }
    }
}

/// Weights of every earlier step in the state at step `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightRow<T: Real = f64> {
    /// 1-based step index.
    pub t: usize,
    /// `weights[j - 1]` is `w_j^t`, shape `batch × d_h`.
    pub weights: Vec<Tensor<T>>,
    /// `Π_{k=1..t} f_k`, the coefficient of `c_0`.
    pub initial: Tensor<T>,
}

impl<T: Real> WeightRow<T> {
    /// `w_j^t` for 1-based `j`.
    pub fn weight(&self, j: usize) -> Option<&Tensor<T>> {
        j.checked_sub(1).and_then(|i| self.weights.get(i))
    }
}

/// Incremental weight computation: holds one row, `O(t · d_h)` memory.
pub struct WeightStream<'a, T: Real = f64> {
    traces: &'a [StepTrace<T>],
    row: Option<WeightRow<T>>,
}

impl<'a, T: Real> WeightStream<'a, T> {
    pub fn new(traces: &'a [StepTrace<T>]) -> Result<Self> {
        validate_traces(traces)?;
        Ok(WeightStream { traces, row: None })
    }

    /// Moves to the next step and returns its row:
    /// `w_j^t = w_j^{t-1} ∘ f_t` for `j < t`, and `w_t^t = i_t`.
    pub fn advance(&mut self) -> Option<&WeightRow<T>> {
        let next_t = self.row.as_ref().map_or(1, |r| r.t + 1);
        let trace = self.traces.get(next_t - 1)?;
        let f = &trace.forget_gate;
        let row = match self.row.take() {
            None => WeightRow {
                t: 1,
                weights: vec![trace.input_gate.clone()],
                initial: f.clone(),
            },
            Some(mut row) => {
                for w in &mut row.weights {
                    *w = hadamard(w, f);
                }
                row.weights.push(trace.input_gate.clone());
                row.initial = hadamard(&row.initial, f);
                row.t = next_t;
                row
            }
        };
        self.row = Some(row);
        self.row.as_ref()
    }

    pub fn current(&self) -> Option<&WeightRow<T>> {
        self.row.as_ref()
    }
}

fn hadamard<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Tensor<T> {
    a.hadamard(b).expect("trace shapes validated")
}

fn validate_traces<T: Real>(traces: &[StepTrace<T>]) -> Result<()> {
    let first = traces
        .first()
        .ok_or_else(|| Error::contract("decomposition needs at least one step trace"))?;
    let shape = first.input_gate.shape();
    for tr in traces {
        for t in [&tr.input_gate, &tr.forget_gate, &tr.content] {
            if t.shape() != shape {
                return Err(Error::Dimension {
                    op: "decomposition trace",
                    left: shape,
                    right: t.shape(),
                });
            }
        }
    }
    Ok(())
}

/// The full triangle of weights. Memory is `O(T² · d_h)`; prefer
/// [`WeightStream`] for long sequences.
#[derive(Debug, Clone, PartialEq)]
pub struct DecompositionWeights<T: Real = f64> {
    pub basis: Basis,
    /// `rows[t - 1]` holds the weights at step `t`.
    pub rows: Vec<WeightRow<T>>,
}

impl<T: Real> DecompositionWeights<T> {
    pub fn steps(&self) -> usize {
        self.rows.len()
    }

    pub fn row(&self, t: usize) -> Option<&WeightRow<T>> {
        t.checked_sub(1).and_then(|i| self.rows.get(i))
    }

    /// `w_j^t`, both indices 1-based.
    pub fn get(&self, t: usize, j: usize) -> Option<&Tensor<T>> {
        if j > t {
            return None;
        }
        self.row(t).and_then(|r| r.weight(j))
    }
}

pub fn compute_weights<T: Real>(traces: &[StepTrace<T>], basis: Basis) -> Result<DecompositionWeights<T>> {
    let mut stream = WeightStream::new(traces)?;
    let mut rows = Vec::with_capacity(traces.len());
    while let Some(row) = stream.advance() {
        rows.push(row.clone());
    }
    Ok(DecompositionWeights { basis, rows })
}

/// `Σ_j w_j^t ∘ basis_j`, plus `(Π f) ∘ c_0` when an initial state is given.
pub fn reconstruct_row<T: Real>(
    row: &WeightRow<T>,
    basis_vectors: &[Tensor<T>],
    initial_state: Option<&Tensor<T>>,
) -> Result<Tensor<T>> {
    if basis_vectors.len() < row.t {
        return Err(Error::contract(format!(
            "step {} needs {} basis vectors, got {}",
            row.t,
            row.t,
            basis_vectors.len()
        )));
    }
    let shape = row.initial.shape();
    let mut acc = Tensor::zeros(shape.0, shape.1);
    for (w, b) in row.weights.iter().zip(basis_vectors) {
        acc.add_assign(&w.hadamard(b)?);
    }
    if let Some(c0) = initial_state {
        acc.add_assign(&row.initial.hadamard(c0)?);
    }
    Ok(acc)
}

pub fn reconstruct_state<T: Real>(
    weights: &DecompositionWeights<T>,
    basis_vectors: &[Tensor<T>],
    t: usize,
    initial_state: Option<&Tensor<T>>,
) -> Result<Tensor<T>> {
    if basis_vectors.len() != weights.steps() {
        return Err(Error::contract(format!(
            "{} basis vectors for {} weight rows",
            basis_vectors.len(),
            weights.steps()
        )));
    }
    let row = weights
        .row(t)
        .ok_or_else(|| Error::contract(format!("step {t} outside 1..={}", weights.steps())))?;
    reconstruct_row(row, basis_vectors, initial_state)
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerifyReport {
    pub basis: Basis,
    pub steps: usize,
    /// `max_t ‖c_t − reconstruction_t‖∞`; infinite when the basis does not
    /// apply to the cell at all.
    pub max_abs_error: f64,
    pub tolerance: f64,
    pub pass: bool,
    pub note: Option<String>,
}

/// Basis vectors for a run, or a reason the basis cannot describe this cell.
fn basis_vectors<T: Real>(
    config: &CellConfig,
    params: &CellParameters<T>,
    xs: &[Tensor<T>],
    traces: &[StepTrace<T>],
    basis: Basis,
) -> Result<std::result::Result<Vec<Tensor<T>>, String>> {
    Ok(match basis {
        Basis::ContentLayers => Ok(traces.iter().map(|t| t.content.clone()).collect()),
        Basis::RawInputs => {
            if config.input_dim != config.hidden_dim {
                Err(format!(
                    "raw inputs have {} components but the state has {}",
                    config.input_dim, config.hidden_dim
                ))
            } else {
                Ok(xs.to_vec())
            }
        }
        Basis::ProjectedInputs => match params.get("w_cx") {
            Some(w) if config.kind.linear_content() => {
                Ok(xs.iter().map(|x| x.matmul_nt(w)).collect::<Result<Vec<_>>>()?)
            }
            _ => Err(format!("{} has no linear input projection", config.kind)),
        },
    })
}

/// Runs the cell, decomposes every state and compares against the
/// recurrence. Mismatches are reported, not returned as errors.
pub fn verify_decomposition<T: Real>(
    config: &CellConfig,
    params: &CellParameters<T>,
    xs: &[Tensor<T>],
    initial: Option<&CellState<T>>,
    basis: Option<Basis>,
    tolerance: f64,
) -> Result<VerifyReport> {
    let basis = basis.unwrap_or_else(|| Basis::natural_for(config.kind));
    let mut rng = SeededRng::new(0);
    let run = unroll(config, params, xs, initial, 0.0, Mode::Eval, &mut rng)?;
    let mut traces = run.traces;
    let states = state_sequence(config, params, xs, initial)?;
    verify_traces(
        config,
        params,
        xs,
        &mut traces,
        &states,
        initial,
        basis,
        tolerance,
        |_| {},
    )
}

/// `c_1..c_T` by stepping the recurrence directly.
fn state_sequence<T: Real>(
    config: &CellConfig,
    params: &CellParameters<T>,
    xs: &[Tensor<T>],
    initial: Option<&CellState<T>>,
) -> Result<Vec<Tensor<T>>> {
    let batch = xs.first().map_or(1, |x| x.rows());
    let mut state = initial.cloned().unwrap_or_else(|| CellState::zeros(config, batch));
    let mut out = Vec::with_capacity(xs.len());
    for x in xs {
        let (next, _) = crate::cells::step(config, params, &state, x)?;
        out.push(next.c.clone());
        state = next;
    }
    Ok(out)
}

/// Shared core of [`verify_decomposition`]; `tamper` may modify the traces
/// before they are decomposed (used for fault injection).
#[allow(clippy::too_many_arguments)]
pub(crate) fn verify_traces<T: Real>(
    config: &CellConfig,
    params: &CellParameters<T>,
    xs: &[Tensor<T>],
    traces: &mut [StepTrace<T>],
    states: &[Tensor<T>],
    initial: Option<&CellState<T>>,
    basis: Basis,
    tolerance: f64,
    tamper: impl FnOnce(&mut [StepTrace<T>]),
) -> Result<VerifyReport> {
    let vectors = match basis_vectors(config, params, xs, traces, basis)? {
        Ok(v) => v,
        Err(note) => {
            return Ok(VerifyReport {
                basis,
                steps: xs.len(),
                max_abs_error: f64::INFINITY,
                tolerance,
                pass: false,
                note: Some(note),
            })
        }
    };
    tamper(traces);
    let c0 = initial.map(|s| &s.c);
    let mut stream = WeightStream::new(traces)?;
    let mut max_err = 0.0f64;
    while let Some(row) = stream.advance() {
        let rebuilt = reconstruct_row(row, &vectors, c0)?;
        let err = rebuilt
            .max_abs_diff(&states[row.t - 1])
            .map_or(f64::INFINITY, |e| e.as_f64());
        max_err = max_err.max(if err.is_nan() { f64::INFINITY } else { err });
    }
    Ok(VerifyReport {
        basis,
        steps: xs.len(),
        max_abs_error: max_err,
        tolerance,
        pass: max_err <= tolerance,
        note: None,
    })
}

/// Strongest predecessor of one step. All indices are 1-based.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Attribution {
    pub step: usize,
    /// `v_t`, in `1..t`.
    pub predecessor: usize,
    /// Component `m` attaining the maximum, in `1..=d_h`.
    pub component: usize,
    pub value: f64,
}

/// `v_t = argmax_{j<t} max_m w_j^t(m)` for one batch row. Ties go to the
/// most recent `j`, and within a `j` to the lowest component.
pub fn attribute_row<T: Real>(row: &WeightRow<T>, batch_row: usize) -> Result<Attribution> {
    if row.t < 2 {
        return Err(Error::contract(format!("attribution needs t >= 2, got {}", row.t)));
    }
    let batch = row.initial.rows();
    if batch_row >= batch {
        return Err(Error::Index {
            op: "attribution",
            index: batch_row,
            bound: batch,
        });
    }
    let mut best: Option<Attribution> = None;
    for j in 1..row.t {
        let w = row.weight(j).expect("row holds t weights");
        let (mut m_best, mut v_best) = (0, f64::NEG_INFINITY);
        for (m, &v) in w.row(batch_row).iter().enumerate() {
            if v.as_f64() > v_best {
                m_best = m;
                v_best = v.as_f64();
            }
        }
        if best.is_none_or(|b| v_best >= b.value) {
            best = Some(Attribution {
                step: row.t,
                predecessor: j,
                component: m_best + 1,
                value: v_best,
            });
        }
    }
    Ok(best.expect("t >= 2"))
}

pub fn attribution<T: Real>(weights: &DecompositionWeights<T>, t: usize, batch_row: usize) -> Result<Attribution> {
    if t < 2 {
        return Err(Error::contract(format!("attribution needs t >= 2, got {t}")));
    }
    let row = weights
        .row(t)
        .ok_or_else(|| Error::contract(format!("step {t} outside 1..={}", weights.steps())))?;
    attribute_row(row, batch_row)
}

/// Attribution for every step `t >= 2`, streaming.
pub fn attribute_sequence<T: Real>(traces: &[StepTrace<T>], batch_row: usize) -> Result<Vec<Attribution>> {
    let mut stream = WeightStream::new(traces)?;
    let mut out = Vec::with_capacity(traces.len().saturating_sub(1));
    while let Some(row) = stream.advance() {
        if row.t >= 2 {
            out.push(attribute_row(row, batch_row)?);
        }
    }
    Ok(out)
}

/// For coupled gates, `Π_{k≤t} f_k + Σ_{j≤t} w_j^t` is identically one.
/// Returns the largest component deviation from one at step `t`.
pub fn normalization_check<T: Real>(traces: &[StepTrace<T>], t: usize) -> Result<f64> {
    if traces.iter().any(|tr| !tr.gates_coupled) {
        return Err(Error::contract(
            "normalization check needs coupled gates (f_t = 1 - i_t)",
        ));
    }
    if t == 0 || t > traces.len() {
        return Err(Error::contract(format!("step {t} outside 1..={}", traces.len())));
    }
    let mut stream = WeightStream::new(&traces[..t])?;
    let mut last = None;
    while let Some(row) = stream.advance() {
        last = Some(row.clone());
    }
    let row = last.expect("t >= 1");
    let mut total = row.initial.clone();
    for w in &row.weights {
        total.add_assign(w);
    }
    Ok(total
        .data()
        .iter()
        .map(|v| (v.as_f64() - 1.0).abs())
        .fold(0.0, f64::max))
}

/// Largest [`normalization_check`] deviation over every step.
pub fn max_normalization_deviation<T: Real>(traces: &[StepTrace<T>]) -> Result<f64> {
    if traces.iter().any(|tr| !tr.gates_coupled) {
        return Err(Error::contract(
            "normalization check needs coupled gates (f_t = 1 - i_t)",
        ));
    }
    let mut stream = WeightStream::new(traces)?;
    let mut worst = 0.0f64;
    while let Some(row) = stream.advance() {
        let mut total = row.initial.clone();
        for w in &row.weights {
            total.add_assign(w);
        }
        worst = total
            .data()
            .iter()
            .map(|v| (v.as_f64() - 1.0).abs())
            .fold(worst, f64::max);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests;
