//! Recurrent additive networks (RANs), their LSTM and GRU relatives, and the
//! tooling to train them as language models and take their state apart.
//!
//! * [`tensor`] and [`autodiff`]: a small dense-tensor engine with
//!   reverse-mode differentiation and SGD ([`optim`]).
//! * [`cells`]: every recurrent cell behind one step interface, plus exact
//!   parameter accounting.
//! * [`decomposition`]: rebuilds a cell state as a component-wise weighted
//!   sum of its inputs and finds the strongest predecessor of each step.
//! * [`lm`]: corpus ingestion, truncated-BPTT training, evaluation and
//!   checkpoints.
//! * [`selfcheck`]: the invariant suite behind `ranlab selfcheck`.

pub mod autodiff;
pub mod cells;
pub mod decomposition;
pub mod error;
pub mod gradcheck;
pub mod lm;
pub mod optim;
pub mod rng;
pub mod selfcheck;
pub mod tensor;

pub use autodiff::{Graph, Mode, Var};
pub use cells::{CellConfig, CellKind, CellParameters, CellState, OutputActivation, StepTrace};
pub use error::{Error, IntegrityError, Result};
pub use rng::SeededRng;
pub use tensor::{Precision, Real, Tensor};
