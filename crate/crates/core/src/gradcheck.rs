//! Central finite-difference checks of reverse-mode gradients.
//!
//! The analytic side comes from [`Graph::backward`]; the numeric side only
//! ever evaluates the forward pass, `(L(θ + h) − L(θ − h)) / 2h`.

use crate::autodiff::{Graph, Mode, Var};
use crate::cells::{init_parameters, parameter_specs, BoundCell, CellConfig, CellKind, CellState, StateVars};
use crate::error::Result;
use crate::rng::SeededRng;
use crate::tensor::Tensor;

/// Denominator floor of [`relative_error`]. Below this magnitude the check
/// degrades gracefully to an absolute one instead of dividing by ~0.
pub const RELATIVE_FLOOR: f64 = 1e-4;

pub const DEFAULT_STEP: f64 = 1e-5;

/// `|a − n| / max(|a|, |n|, RELATIVE_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_FLOOR)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    /// Where the worst error occurred: (input index, component).
    pub worst: (usize, usize),
    pub components: usize,
}

/// Compares the gradient of `loss(inputs)` against central differences for
/// every component of every input.
pub fn check_gradients<F>(inputs: &[Tensor], step: f64, loss: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars = inputs
        .iter()
        .map(|t| g.parameter(t.clone()))
        .collect::<Result<Vec<_>>>()?;
    let out = loss(&mut g, &vars)?;
    let grads = g.backward(out)?.parameters();

    let eval = |values: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let vars = values
            .iter()
            .map(|t| g.constant(t.clone()))
            .collect::<Result<Vec<_>>>()?;
        let out = loss(&mut g, &vars)?;
        Ok(g.value(out).data()[0])
    };

    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst: (0, 0),
        components: 0,
    };
    let mut work = inputs.to_vec();
    for (k, grad) in grads.iter().enumerate() {
        for idx in 0..work[k].len() {
            let orig = work[k].data()[idx];
            work[k].data_mut()[idx] = orig + step;
            let up = eval(&work)?;
            work[k].data_mut()[idx] = orig - step;
            let down = eval(&work)?;
            work[k].data_mut()[idx] = orig;
            let numeric = (up - down) / (2.0 * step);
            let err = relative_error(grad.data()[idx], numeric);
            if err > report.max_relative_error {
                report.max_relative_error = err;
                report.worst = (k, idx);
            }
            report.components += 1;
        }
    }
    Ok(report)
}

fn random_tensor(rows: usize, cols: usize, scale: f64, rng: &mut SeededRng) -> Tensor {
    let data = (0..rows * cols).map(|_| rng.uniform(-scale, scale)).collect();
    Tensor::from_vec_unchecked(rows, cols, data)
}

/// Gradient check of a whole unrolled cell.
///
/// Inputs differentiated: every parameter tensor, every `x_t`, and the
/// initial state. The loss is a fixed random linear readout of every output
/// followed by `tanh`, summed over time.
pub fn check_cell(
    kind: CellKind,
    hidden: usize,
    input: usize,
    steps: usize,
    batch: usize,
    seed: u64,
) -> Result<GradCheckReport> {
    let input = if kind == CellKind::RanSimplified { hidden } else { input };
    let config = CellConfig::new(kind, input, hidden);
    let mut rng = SeededRng::new(seed);
    let params = init_parameters::<f64>(&config, 0.6, 0.3, &mut rng)?;
    let specs = parameter_specs(&config)?;

    let mut inputs: Vec<Tensor> = params.iter().map(|(_, t)| t.clone()).collect();
    // Non-zero biases so their gradients are exercised away from 0.
    for (t, spec) in inputs.iter_mut().zip(&specs) {
        if spec.rows == 1 {
            *t = random_tensor(1, spec.cols, 0.5, &mut rng);
        }
    }
    let n_params = inputs.len();
    for _ in 0..steps {
        inputs.push(random_tensor(batch, input, 1.0, &mut rng));
    }
    let zero: CellState = CellState::zeros(&config, batch);
    inputs.push(random_tensor(batch, hidden, 0.5, &mut rng));
    let has_h = zero.h.is_some();
    if has_h {
        inputs.push(random_tensor(batch, config.recurrent_dim(), 0.5, &mut rng));
    }
    let readouts: Vec<Tensor> = (0..steps)
        .map(|_| random_tensor(config.output_dim(), 3, 1.0, &mut rng))
        .collect();

    check_gradients(&inputs, DEFAULT_STEP, |g, vars| {
        let cell = BoundCell::from_vars(&config, &specs, &vars[..n_params]);
        let xs = &vars[n_params..n_params + steps];
        let c0 = vars[n_params + steps];
        let h0 = has_h.then(|| vars[n_params + steps + 1]);
        let mut rng = SeededRng::new(0);
        let (outs, _, _) =
            crate::cells::unroll_graph(g, &cell, StateVars { c: c0, h: h0 }, xs, 0.0, 0.0, Mode::Eval, &mut rng)?;
        let mut total = None;
        for (o, r) in outs.iter().zip(&readouts) {
            let r = g.constant(r.clone())?;
            let proj = g.matmul(*o, r)?;
            let act = g.tanh(proj)?;
            let s = g.sum(act)?;
            total = Some(match total {
                None => s,
                Some(acc) => g.add(acc, s)?,
            });
        }
        Ok(total.expect("steps > 0"))
    })
}
