//! The invariant suite behind `ranlab selfcheck`.

use std::fmt;
use std::str::FromStr;

use crate::autodiff::Mode;
use crate::cells::{init_parameters, parameter_specs, unroll, CellConfig, CellKind, CellParameters, ParamRole};
use crate::decomposition::{
    attribute_row, max_normalization_deviation, verify_decomposition, verify_traces, Basis, WeightRow,
};
use crate::error::{Error, Result};
use crate::gradcheck::check_cell;
use crate::rng::SeededRng;
use crate::tensor::Tensor;

pub const GRADIENT_TOLERANCE: f64 = 1e-5;
pub const DECOMPOSITION_TOLERANCE: f64 = 1e-8;
pub const NORMALIZATION_TOLERANCE: f64 = 1e-8;

/// Deliberate corruption used to show the suite can fail.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fault {
    /// Negates every recorded forget gate before decomposing.
    ForgetSign,
}

impl FromStr for Fault {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "forget-sign" => Ok(Fault::ForgetSign),
            other => Err(Error::config(format!("unknown fault `{other}` (known: forget-sign)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PropertyResult {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

impl fmt::Display for PropertyResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {}: {}",
            if self.pass { "PASS" } else { "FAIL" },
            self.name,
            self.detail
        )
    }
}

#[derive(Debug, Clone, Copy)]
struct Sizes {
    grad_hidden: usize,
    grad_steps: usize,
    decomposition_instances: usize,
    decomposition_max_steps: usize,
    decomposition_max_hidden: usize,
    equivalence_draws: usize,
    normalization_runs: usize,
    normalization_max_steps: usize,
    attribution_sets: usize,
}

impl Sizes {
    fn new(quick: bool) -> Self {
        if quick {
            Sizes {
                grad_hidden: 3,
                grad_steps: 3,
                decomposition_instances: 20,
                decomposition_max_steps: 30,
                decomposition_max_hidden: 16,
                equivalence_draws: 20,
                normalization_runs: 20,
                normalization_max_steps: 20,
                attribution_sets: 100,
            }
        } else {
            Sizes {
                grad_hidden: 8,
                grad_steps: 5,
                decomposition_instances: 200,
                decomposition_max_steps: 100,
                decomposition_max_hidden: 64,
                equivalence_draws: 100,
                normalization_runs: 100,
                normalization_max_steps: 50,
                attribution_sets: 1000,
            }
        }
    }
}

/// Random parameters with nonzero biases and matching random inputs.
pub fn random_instance(
    kind: CellKind,
    hidden: usize,
    input: usize,
    steps: usize,
    batch: usize,
    rng: &mut SeededRng,
) -> Result<(CellConfig, CellParameters, Vec<Tensor>)> {
    let input = if kind == CellKind::RanSimplified { hidden } else { input };
    let config = CellConfig::new(kind, input, hidden);
    let mut params = init_parameters::<f64>(&config, 0.5, 0.0, rng)?;
    for spec in parameter_specs(&config)? {
        if spec.role != ParamRole::Weight {
            let t = params.get_mut(spec.name).expect("spec names exist");
            for v in t.data_mut() {
                *v = rng.uniform(-1.0, 1.0);
            }
        }
    }
    let xs = (0..steps)
        .map(|_| {
            let data = (0..batch * input).map(|_| rng.uniform(-1.0, 1.0)).collect();
            Tensor::from_vec(batch, input, data)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((config, params, xs))
}

/// Brute-force reference for attribution: scans every `(j, m)` pair with
/// the tie rule spelled out (larger value, then larger `j`, then smaller `m`).
pub fn attribution_oracle(row: &WeightRow, batch_row: usize) -> (usize, usize, f64) {
    let mut best = (0usize, 0usize, f64::NEG_INFINITY);
    for j in 1..row.t {
        let w = &row.weights[j - 1];
        for m in 0..w.cols() {
            let v = w.get(batch_row, m);
            let better = v > best.2 || (v == best.2 && (j > best.0 || (j == best.0 && m + 1 < best.1)));
            if better {
                best = (j, m + 1, v);
            }
        }
    }
    best
}

/// A random weight row. Values are drawn from a coarse grid so ties occur.
pub fn random_weight_row(rng: &mut SeededRng) -> WeightRow {
    let t = 2 + rng.below(14);
    let d = 1 + rng.below(8);
    let batch = 1 + rng.below(3);
    let levels = 2 + rng.below(10);
    let grid = |rng: &mut SeededRng| rng.below(levels + 1) as f64 / levels as f64;
    let weights = (0..t)
        .map(|_| {
            let data = (0..batch * d).map(|_| grid(rng)).collect();
            Tensor::from_vec_unchecked(batch, d, data)
        })
        .collect();
    WeightRow {
        t,
        weights,
        initial: Tensor::zeros(batch, d),
    }
}

fn result(name: impl Into<String>, pass: bool, detail: String) -> PropertyResult {
    PropertyResult {
        name: name.into(),
        pass,
        detail,
    }
}

fn gradient_checks(sizes: Sizes, seed: u64) -> Result<Vec<PropertyResult>> {
    let mut out = Vec::new();
    for (k, kind) in CellKind::ALL.into_iter().enumerate() {
        let report = check_cell(
            kind,
            sizes.grad_hidden,
            sizes.grad_hidden.max(2) - 1,
            sizes.grad_steps,
            2,
            seed + k as u64,
        )?;
        out.push(result(
            format!("gradient-check/{kind}"),
            report.max_relative_error <= GRADIENT_TOLERANCE,
            format!(
                "max relative error {:.3e} over {} components (tolerance {GRADIENT_TOLERANCE:e})",
                report.max_relative_error, report.components
            ),
        ));
    }
    Ok(out)
}

fn decomposition_check(sizes: Sizes, seed: u64, fault: Option<Fault>) -> Result<PropertyResult> {
    let mut rng = SeededRng::new(seed);
    let mut worst = 0.0f64;
    for _ in 0..sizes.decomposition_instances {
        let steps = 1 + rng.below(sizes.decomposition_max_steps);
        let hidden = 1 + rng.below(sizes.decomposition_max_hidden);
        let (config, params, xs) = random_instance(CellKind::RanSimplified, hidden, hidden, steps, 1, &mut rng)?;
        let mut run_rng = SeededRng::new(0);
        let run = unroll(&config, &params, &xs, None, 0.0, Mode::Eval, &mut run_rng)?;
        let mut traces = run.traces;
        let mut state = crate::cells::CellState::zeros(&config, 1);
        let mut states = Vec::with_capacity(steps);
        for x in &xs {
            let (next, _) = crate::cells::step(&config, &params, &state, x)?;
            states.push(next.c.clone());
            state = next;
        }
        let report = verify_traces(
            &config,
            &params,
            &xs,
            &mut traces,
            &states,
            None,
            Basis::RawInputs,
            DECOMPOSITION_TOLERANCE,
            |tr| {
                if fault == Some(Fault::ForgetSign) {
                    for t in tr.iter_mut() {
                        t.forget_gate = t.forget_gate.scale(-1.0);
                    }
                }
            },
        )?;
        worst = worst.max(report.max_abs_error);
    }
    Ok(result(
        "weighted-sum-decomposition/ran-simplified",
        worst <= DECOMPOSITION_TOLERANCE,
        format!(
            "max abs error {worst:.3e} over {} runs (tolerance {DECOMPOSITION_TOLERANCE:e})",
            sizes.decomposition_instances
        ),
    ))
}

fn content_layer_checks(sizes: Sizes, seed: u64) -> Result<Vec<PropertyResult>> {
    let mut rng = SeededRng::new(seed);
    let runs = (sizes.equivalence_draws / 10).max(2);
    let mut out = Vec::new();
    for (kind, basis, expect_pass) in [
        (CellKind::Lstm, Basis::ContentLayers, true),
        (CellKind::RanGeneral, Basis::ProjectedInputs, true),
        (CellKind::GruDerivedRan, Basis::ProjectedInputs, true),
        (CellKind::Lstm, Basis::RawInputs, false),
    ] {
        let mut worst = 0.0f64;
        let mut all_pass = true;
        let mut any_pass = false;
        for _ in 0..runs {
            let (config, params, xs) = random_instance(kind, 6, 6, 12, 2, &mut rng)?;
            let report = verify_decomposition(&config, &params, &xs, None, Some(basis), DECOMPOSITION_TOLERANCE)?;
            worst = worst.max(report.max_abs_error);
            all_pass &= report.pass;
            any_pass |= report.pass;
        }
        let basis_name = serde_json::to_value(basis)
            .ok()
            .and_then(|v| v.as_str().map(String::from))
            .unwrap_or_default();
        let name = format!("weighted-sum-decomposition/{kind}/{basis_name}");
        if expect_pass {
            out.push(result(
                name,
                all_pass,
                format!("max abs error {worst:.3e} over {runs} runs"),
            ));
        } else {
            out.push(result(
                name,
                !any_pass,
                format!("expected not expressible; max abs error {worst:.3e} over {runs} runs"),
            ));
        }
    }
    Ok(out)
}

fn equivalence_check(sizes: Sizes, seed: u64) -> Result<PropertyResult> {
    let mut rng = SeededRng::new(seed);
    let mut mismatches = 0;
    let mut worst = 0.0f64;
    for _ in 0..sizes.equivalence_draws {
        let hidden = 1 + rng.below(16);
        let input = 1 + rng.below(16);
        let steps = 1 + rng.below(20);
        let (ran_cfg, params, xs) = random_instance(CellKind::RanGeneral, hidden, input, steps, 2, &mut rng)?;
        let lstm_cfg = CellConfig {
            kind: CellKind::LstmLinearContent,
            ..ran_cfg
        };
        let named = params.iter().map(|(n, t)| (n.to_string(), t.clone())).collect();
        let lstm_params = CellParameters::from_named(&lstm_cfg, named)?;
        let mut r1 = SeededRng::new(0);
        let mut r2 = SeededRng::new(0);
        let a = unroll(&ran_cfg, &params, &xs, None, 0.0, Mode::Eval, &mut r1)?;
        let b = unroll(&lstm_cfg, &lstm_params, &xs, None, 0.0, Mode::Eval, &mut r2)?;
        for (x, y) in a.outputs.iter().zip(&b.outputs) {
            if x != y {
                mismatches += 1;
                worst = worst.max(x.max_abs_diff(y).unwrap_or(f64::INFINITY));
            }
        }
    }
    Ok(result(
        "derivation-equivalence/ran-general=lstm-linear-content",
        mismatches == 0,
        format!(
            "{mismatches} differing outputs in {} draws (max abs diff {worst:.3e})",
            sizes.equivalence_draws
        ),
    ))
}

fn normalization_checks(sizes: Sizes, seed: u64) -> Result<Vec<PropertyResult>> {
    let mut rng = SeededRng::new(seed);
    let mut out = Vec::new();
    for kind in CellKind::ALL.into_iter().filter(|k| k.gates_coupled()) {
        let mut worst = 0.0f64;
        for _ in 0..sizes.normalization_runs {
            let steps = 1 + rng.below(sizes.normalization_max_steps);
            let hidden = 1 + rng.below(12);
            let (config, params, xs) = random_instance(kind, hidden, 1 + rng.below(8), steps, 2, &mut rng)?;
            let mut r = SeededRng::new(0);
            let run = unroll(&config, &params, &xs, None, 0.0, Mode::Eval, &mut r)?;
            worst = worst.max(max_normalization_deviation(&run.traces)?);
        }
        out.push(result(
            format!("weighted-average/{kind}"),
            worst <= NORMALIZATION_TOLERANCE,
            format!(
                "max deviation {worst:.3e} over {} runs (tolerance {NORMALIZATION_TOLERANCE:e})",
                sizes.normalization_runs
            ),
        ));
    }
    Ok(out)
}

fn attribution_check(sizes: Sizes, seed: u64) -> Result<PropertyResult> {
    let mut rng = SeededRng::new(seed);
    let mut disagreements = 0;
    for _ in 0..sizes.attribution_sets {
        let row = random_weight_row(&mut rng);
        for b in 0..row.initial.rows() {
            let got = attribute_row(&row, b)?;
            let (j, m, v) = attribution_oracle(&row, b);
            if (got.predecessor, got.component, got.value) != (j, m, v) {
                disagreements += 1;
            }
        }
    }
    Ok(result(
        "attribution/exhaustive-oracle",
        disagreements == 0,
        format!(
            "{disagreements} disagreements over {} weight sets",
            sizes.attribution_sets
        ),
    ))
}

/// Runs every property and returns one result per line of the report.
pub fn run_selfcheck(quick: bool, fault: Option<Fault>, seed: u64) -> Result<Vec<PropertyResult>> {
    let sizes = Sizes::new(quick);
    let mut out = gradient_checks(sizes, seed)?;
    out.push(decomposition_check(sizes, seed.wrapping_add(101), fault)?);
    out.extend(content_layer_checks(sizes, seed.wrapping_add(202))?);
    out.push(equivalence_check(sizes, seed.wrapping_add(303))?);
    out.extend(normalization_checks(sizes, seed.wrapping_add(404))?);
    out.push(attribution_check(sizes, seed.wrapping_add(505))?);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quick_suite_passes() {
        let results = run_selfcheck(true, None, 7).unwrap();
        for r in &results {
            assert!(r.pass, "{r}");
        }
    }

    #[test]
    fn forget_sign_fault_is_caught() {
        let results = run_selfcheck(true, Some(Fault::ForgetSign), 7).unwrap();
        let failing: Vec<&str> = results.iter().filter(|r| !r.pass).map(|r| r.name.as_str()).collect();
        assert_eq!(failing, vec!["weighted-sum-decomposition/ran-simplified"]);
    }

    #[test]
    fn oracle_breaks_ties_toward_recent_steps() {
        let row = WeightRow {
            t: 3,
            weights: vec![
                Tensor::from_rows(&[&[0.5, 0.2]]).unwrap(),
                Tensor::from_rows(&[&[0.1, 0.5]]).unwrap(),
                Tensor::from_rows(&[&[0.9, 0.9]]).unwrap(),
            ],
            initial: Tensor::zeros(1, 2),
        };
        assert_eq!(attribution_oracle(&row, 0), (2, 2, 0.5));
    }
}
