//! Recurrent cells.
//!
//! All eight architectures share one state update shape,
//! `c_t = i_t ∘ c̃_t + f_t ∘ c_{t-1}`, and differ in how the gates `i_t`,
//! `f_t` and the content layer `c̃_t` are computed and in what the cell emits:
//!
//! | kind                  | content `c̃_t`                 | gates condition on | emits         |
//! |-----------------------|--------------------------------|--------------------|---------------|
//! | `RanGeneral`          | `W_cx x_t`                     | `h_{t-1}`          | `g(c_t)`      |
//! | `RanSimplified`       | `x_t`                          | `c_{t-1}`          | `c_t`         |
//! | `Lstm`                | `tanh(W_ch h + W_cx x + b_c)`  | `h_{t-1}`          | `o ∘ tanh(c)` |
//! | `LstmNoOutputGate`    | `tanh(W_ch h + W_cx x + b_c)`  | `h_{t-1}`          | `g(c_t)`      |
//! | `LstmLinearContent`   | `W_cx x_t`                     | `h_{t-1}`          | `g(c_t)`      |
//! | `GruStandard`         | `tanh(W_hh (r∘h) + W_hx x + b_h)` | `h_{t-1}`       | `h_t`         |
//! | `GruAlternate`        | `tanh(W_ch h + W_cx x + b_c)`  | `c_{t-1}`          | `c_t`         |
//! | `GruDerivedRan`       | `W_cx x_t`                     | `c_{t-1}`          | `c_t`         |
//!
//! GRU kinds couple the gates (`f_t = 1 − i_t`), except `GruDerivedRan`
//! which repurposes the output gate as a free forget gate.

mod params;
mod stack;
mod step;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

pub use params::{count_parameters, enumerate_parameters, init_parameters, parameter_specs, ParamRole, ParamSpec};
pub use stack::{Stack, StackRun};
pub use step::{step, step_graph, unroll, unroll_graph, BoundCell, StateVars, TraceVars, Unrolled};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CellKind {
    RanGeneral,
    RanSimplified,
    Lstm,
    LstmNoOutputGate,
    LstmLinearContent,
    GruStandard,
    GruAlternate,
    GruDerivedRan,
}

impl CellKind {
    pub const ALL: [CellKind; 8] = [
        CellKind::RanGeneral,
        CellKind::RanSimplified,
        CellKind::Lstm,
        CellKind::LstmNoOutputGate,
        CellKind::LstmLinearContent,
        CellKind::GruStandard,
        CellKind::GruAlternate,
        CellKind::GruDerivedRan,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CellKind::RanGeneral => "ran-general",
            CellKind::RanSimplified => "ran-simplified",
            CellKind::Lstm => "lstm",
            CellKind::LstmNoOutputGate => "lstm-no-output-gate",
            CellKind::LstmLinearContent => "lstm-linear-content",
            CellKind::GruStandard => "gru-standard",
            CellKind::GruAlternate => "gru-alternate",
            CellKind::GruDerivedRan => "gru-derived-ran",
        }
    }

    /// Second gate is `1 − i_t`, so the state is a weighted average.
    pub fn gates_coupled(self) -> bool {
        matches!(self, CellKind::GruStandard | CellKind::GruAlternate)
    }

    /// Whether the layer output is a separate `h_t` rather than the state `c_t`.
    pub fn emits_hidden(self) -> bool {
        matches!(
            self,
            CellKind::RanGeneral | CellKind::Lstm | CellKind::LstmNoOutputGate | CellKind::LstmLinearContent
        )
    }

    /// Kinds that carry an `h_t` alongside `c_t` in their state.
    pub fn has_hidden_state(self) -> bool {
        self.emits_hidden() || self == CellKind::GruAlternate
    }

    /// Kinds whose output is `g(c_t)` with a configurable `g`.
    pub fn uses_output_activation(self) -> bool {
        matches!(
            self,
            CellKind::RanGeneral | CellKind::LstmNoOutputGate | CellKind::LstmLinearContent
        )
    }

    /// Kinds where `h_t` can be projected down before it is fed back.
    pub fn supports_projection(self) -> bool {
        self.emits_hidden()
    }

    /// Kinds whose content layer is the linear projection `W_cx x_t`.
    pub fn linear_content(self) -> bool {
        matches!(
            self,
            CellKind::RanGeneral | CellKind::LstmLinearContent | CellKind::GruDerivedRan
        )
    }
}

impl fmt::Display for CellKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CellKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase().replace('_', "-");
        let kind = match s.as_str() {
            "ran" | "ran-general" => CellKind::RanGeneral,
            "ran-simplified" | "ran-simple" => CellKind::RanSimplified,
            "lstm" => CellKind::Lstm,
            "lstm-no-output-gate" => CellKind::LstmNoOutputGate,
            "lstm-linear-content" => CellKind::LstmLinearContent,
            "gru" | "gru-standard" => CellKind::GruStandard,
            "gru-alternate" => CellKind::GruAlternate,
            "gru-derived-ran" => CellKind::GruDerivedRan,
            other => return Err(Error::config(format!("unknown cell kind `{other}`"))),
        };
        Ok(kind)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum OutputActivation {
    #[default]
    Tanh,
    Identity,
}

impl FromStr for OutputActivation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "tanh" => Ok(OutputActivation::Tanh),
            "identity" | "linear" => Ok(OutputActivation::Identity),
            other => Err(Error::config(format!("unknown output activation `{other}`"))),
        }
    }
}

impl fmt::Display for OutputActivation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OutputActivation::Tanh => "tanh",
            OutputActivation::Identity => "identity",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellConfig {
    pub kind: CellKind,
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub output_activation: OutputActivation,
    /// Width `h_t` is projected to before feedback and output.
    pub projection: Option<usize>,
}

impl CellConfig {
    pub fn new(kind: CellKind, input_dim: usize, hidden_dim: usize) -> Self {
        CellConfig {
            kind,
            input_dim,
            hidden_dim,
            output_activation: OutputActivation::Tanh,
            projection: None,
        }
    }

    pub fn with_activation(mut self, g: OutputActivation) -> Self {
        self.output_activation = g;
        self
    }

    pub fn with_projection(mut self, p: usize) -> Self {
        self.projection = Some(p);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.hidden_dim == 0 {
            return Err(Error::config(format!(
                "{}: input and hidden dims must be positive (got {}, {})",
                self.kind, self.input_dim, self.hidden_dim
            )));
        }
        if self.kind == CellKind::RanSimplified && self.input_dim != self.hidden_dim {
            return Err(Error::config(format!(
                "ran-simplified adds x_t straight into the state, so input dim ({}) must equal hidden dim ({})",
                self.input_dim, self.hidden_dim
            )));
        }
        if let Some(p) = self.projection {
            if !self.kind.supports_projection() {
                return Err(Error::config(format!(
                    "{} does not support an output projection",
                    self.kind
                )));
            }
            if p == 0 {
                return Err(Error::config("projection width must be positive"));
            }
        }
        Ok(())
    }

    /// Width of `h_t` as fed back into the gates (and emitted).
    pub fn recurrent_dim(&self) -> usize {
        self.projection.unwrap_or(self.hidden_dim)
    }

    /// Width of what this layer hands to the next one.
    pub fn output_dim(&self) -> usize {
        if self.kind.emits_hidden() {
            self.recurrent_dim()
        } else {
            self.hidden_dim
        }
    }
}

/// Named weights and biases of one cell. The names are exactly the symbols of
/// the kind's defining equations, in [`parameter_specs`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct CellParameters<T: Real = f64> {
    entries: Vec<(&'static str, Tensor<T>)>,
}

impl<T: Real> CellParameters<T> {
    /// Assembles parameters from named tensors, checking every name and shape
    /// against the config.
    pub fn from_named(config: &CellConfig, mut named: Vec<(String, Tensor<T>)>) -> Result<Self> {
        let specs = parameter_specs(config)?;
        if named.len() != specs.len() {
            return Err(Error::config(format!(
                "{} expects {} parameter tensors, got {}",
                config.kind,
                specs.len(),
                named.len()
            )));
        }
        let mut entries = Vec::with_capacity(specs.len());
        for spec in &specs {
            let pos = named
                .iter()
                .position(|(n, _)| n == spec.name)
                .ok_or_else(|| Error::config(format!("{}: missing parameter `{}`", config.kind, spec.name)))?;
            let (_, t) = named.swap_remove(pos);
            if t.shape() != (spec.rows, spec.cols) {
                return Err(Error::Dimension {
                    op: "CellParameters::from_named",
                    left: (spec.rows, spec.cols),
                    right: t.shape(),
                });
            }
            entries.push((spec.name, t));
        }
        Ok(CellParameters { entries })
    }

    pub(crate) fn from_entries_unchecked(entries: Vec<(&'static str, Tensor<T>)>) -> Self {
        CellParameters { entries }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.entries.iter().find(|(n, _)| *n == name).map(|(_, t)| t)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.entries.iter_mut().find(|(n, _)| *n == name).map(|(_, t)| t)
    }

    pub fn names(&self) -> impl Iterator<Item = &'static str> + '_ {
        self.entries.iter().map(|(n, _)| *n)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&'static str, &Tensor<T>)> {
        self.entries.iter().map(|(n, t)| (*n, t))
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor<T>> {
        self.entries.iter_mut().map(|(_, t)| t)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scalars.
    pub fn scalar_count(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.len()).sum()
    }
}

/// Recurrent state. `h` is `None` for kinds whose output is `c_t` itself.
#[derive(Debug, Clone, PartialEq)]
pub struct CellState<T: Real = f64> {
    pub c: Tensor<T>,
    pub h: Option<Tensor<T>>,
}

impl<T: Real> CellState<T> {
    pub fn zeros(config: &CellConfig, batch: usize) -> Self {
        let h = config
            .kind
            .has_hidden_state()
            .then(|| Tensor::zeros(batch, config.recurrent_dim()));
        CellState {
            c: Tensor::zeros(batch, config.hidden_dim),
            h,
        }
    }

    pub fn batch(&self) -> usize {
        self.c.rows()
    }

    /// What the cell hands to the next layer.
    pub fn output(&self, config: &CellConfig) -> &Tensor<T> {
        match (&self.h, config.kind.emits_hidden()) {
            (Some(h), true) => h,
            _ => &self.c,
        }
    }
}

/// Gate activations and content layer of one step; the input to the
/// decomposition tracer.
#[derive(Debug, Clone, PartialEq)]
pub struct StepTrace<T: Real = f64> {
    pub input_gate: Tensor<T>,
    /// `f_t`, or the `1 − z_t` / repurposed output gate for GRU-style kinds.
    pub forget_gate: Tensor<T>,
    pub content: Tensor<T>,
    pub gates_coupled: bool,
}
