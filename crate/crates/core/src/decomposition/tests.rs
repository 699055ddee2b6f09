use proptest::prelude::*;

use super::*;
use crate::cells::CellKind;
use crate::selfcheck::{attribution_oracle, random_instance, random_weight_row};

fn scalar_trace(i: f64, f: f64, coupled: bool) -> StepTrace {
    StepTrace {
        input_gate: Tensor::scalar(i),
        forget_gate: Tensor::scalar(f),
        content: Tensor::scalar(0.0),
        gates_coupled: coupled,
    }
}

fn run_traces(
    config: &CellConfig,
    params: &CellParameters,
    xs: &[Tensor],
    initial: Option<&CellState>,
) -> Vec<StepTrace> {
    let mut rng = SeededRng::new(0);
    unroll(config, params, xs, initial, 0.0, Mode::Eval, &mut rng)
        .unwrap()
        .traces
}

#[test]
fn two_step_scalar_weights() {
    let traces = vec![scalar_trace(0.5, 0.3, false), scalar_trace(0.5, 0.5, false)];
    let w = compute_weights(&traces, Basis::RawInputs).unwrap();
    assert_eq!(w.get(2, 1).unwrap().item(), Some(0.25));
    assert_eq!(w.get(2, 2).unwrap().item(), Some(0.5));
    assert_eq!(w.get(1, 1).unwrap().item(), Some(0.5));
    assert!(w.get(1, 2).is_none());
}

#[test]
fn unit_forget_gates_keep_input_gates() {
    let traces: Vec<StepTrace> = [0.2, 0.7, 0.4, 0.9]
        .iter()
        .map(|&i| scalar_trace(i, 1.0, false))
        .collect();
    let w = compute_weights(&traces, Basis::RawInputs).unwrap();
    for t in 1..=4 {
        for j in 1..=t {
            assert_eq!(w.get(t, j).unwrap().item(), traces[j - 1].input_gate.item());
        }
    }
}

#[test]
fn single_step_reconstruction_is_gate_times_basis() {
    let traces = vec![StepTrace {
        input_gate: Tensor::row_vector(&[0.25, 0.75]).unwrap(),
        forget_gate: Tensor::row_vector(&[0.5, 0.5]).unwrap(),
        content: Tensor::row_vector(&[0.0, 0.0]).unwrap(),
        gates_coupled: false,
    }];
    let w = compute_weights(&traces, Basis::RawInputs).unwrap();
    let basis = vec![Tensor::row_vector(&[4.0, -4.0]).unwrap()];
    assert_eq!(reconstruct_state(&w, &basis, 1, None).unwrap().data(), &[1.0, -3.0]);
}

#[test]
fn empty_trace_is_contract_error() {
    let traces: Vec<StepTrace> = Vec::new();
    assert!(matches!(
        compute_weights(&traces, Basis::RawInputs),
        Err(Error::Contract(_))
    ));
}

#[test]
fn basis_count_must_match_weights() {
    let traces = vec![scalar_trace(0.5, 0.5, false); 3];
    let w = compute_weights(&traces, Basis::RawInputs).unwrap();
    let basis = vec![Tensor::scalar(1.0); 2];
    assert!(matches!(
        reconstruct_state(&w, &basis, 2, None),
        Err(Error::Contract(_))
    ));
}

#[test]
fn ran_simplified_state_is_weighted_sum_of_inputs() {
    let mut rng = SeededRng::new(50);
    let (config, params, xs) = random_instance(CellKind::RanSimplified, 32, 32, 50, 1, &mut rng).unwrap();
    let traces = run_traces(&config, &params, &xs, None);
    let w = compute_weights(&traces, Basis::RawInputs).unwrap();
    let mut state = CellState::zeros(&config, 1);
    for (t, x) in xs.iter().enumerate() {
        state = crate::cells::step(&config, &params, &state, x).unwrap().0;
        let rebuilt = reconstruct_state(&w, &xs, t + 1, None).unwrap();
        assert!(rebuilt.max_abs_diff(&state.c).unwrap() <= 1e-10);
    }
}

#[test]
fn nonzero_initial_state_enters_through_explicit_term() {
    let mut rng = SeededRng::new(51);
    let (config, params, xs) = random_instance(CellKind::RanSimplified, 5, 5, 12, 2, &mut rng).unwrap();
    let c0 = Tensor::from_vec(2, 5, (0..10).map(|k| k as f64 / 10.0 - 0.5).collect()).unwrap();
    let initial = CellState { c: c0, h: None };
    let report = verify_decomposition(&config, &params, &xs, Some(&initial), None, 1e-10).unwrap();
    assert!(report.pass, "{report:?}");
    let without = {
        let traces = run_traces(&config, &params, &xs, Some(&initial));
        let w = compute_weights(&traces, Basis::RawInputs).unwrap();
        reconstruct_state(&w, &xs, 12, None).unwrap()
    };
    let mut state = initial.clone();
    for x in &xs {
        state = crate::cells::step(&config, &params, &state, x).unwrap().0;
    }
    assert!(without.max_abs_diff(&state.c).unwrap() > 1e-6);
}

#[test]
fn lstm_state_is_weighted_sum_of_content_layers() {
    let mut rng = SeededRng::new(52);
    let (config, params, xs) = random_instance(CellKind::Lstm, 8, 5, 30, 2, &mut rng).unwrap();
    let report = verify_decomposition(&config, &params, &xs, None, Some(Basis::ContentLayers), 1e-10).unwrap();
    assert!(report.pass, "{report:?}");
}

#[test]
fn ran_general_state_is_weighted_sum_of_projected_inputs() {
    let mut rng = SeededRng::new(53);
    let (config, params, xs) = random_instance(CellKind::RanGeneral, 8, 5, 30, 2, &mut rng).unwrap();
    let report = verify_decomposition(&config, &params, &xs, None, Some(Basis::ProjectedInputs), 1e-10).unwrap();
    assert!(report.pass, "{report:?}");
    assert_eq!(Basis::natural_for(CellKind::RanGeneral), Basis::ProjectedInputs);
}

#[test]
fn lstm_is_not_a_weighted_sum_of_raw_inputs() {
    let mut rng = SeededRng::new(54);
    let (config, params, xs) = random_instance(CellKind::Lstm, 6, 6, 10, 1, &mut rng).unwrap();
    let report = verify_decomposition(&config, &params, &xs, None, Some(Basis::RawInputs), 1e-8).unwrap();
    assert!(!report.pass);
    let (config, params, xs) = random_instance(CellKind::Lstm, 6, 4, 10, 1, &mut rng).unwrap();
    let report = verify_decomposition(&config, &params, &xs, None, Some(Basis::RawInputs), 1e-8).unwrap();
    assert!(!report.pass && report.note.is_some());
}

#[test]
fn single_step_run_passes() {
    let mut rng = SeededRng::new(55);
    let (config, params, xs) = random_instance(CellKind::RanSimplified, 4, 4, 1, 1, &mut rng).unwrap();
    assert!(
        verify_decomposition(&config, &params, &xs, None, None, 1e-12)
            .unwrap()
            .pass
    );
}

#[test]
fn attribution_examples() {
    let traces = vec![scalar_trace(0.5, 0.5, false); 2];
    let w = compute_weights(&traces, Basis::RawInputs).unwrap();
    let a = attribution(&w, 2, 0).unwrap();
    assert_eq!((a.step, a.predecessor, a.component), (2, 1, 1));

    let row = WeightRow {
        t: 3,
        weights: vec![
            Tensor::row_vector(&[0.9, 0.1]).unwrap(),
            Tensor::row_vector(&[0.2, 0.3]).unwrap(),
            Tensor::row_vector(&[1.0, 1.0]).unwrap(),
        ],
        initial: Tensor::zeros(1, 2),
    };
    let a = attribute_row(&row, 0).unwrap();
    assert_eq!((a.predecessor, a.component, a.value), (1, 1, 0.9));
    assert!(matches!(attribution(&w, 1, 0), Err(Error::Contract(_))));
}

#[test]
fn attribution_ties_prefer_recent_step() {
    let row = WeightRow {
        t: 3,
        weights: vec![
            Tensor::row_vector(&[0.4, 0.1]).unwrap(),
            Tensor::row_vector(&[0.1, 0.4]).unwrap(),
            Tensor::row_vector(&[0.0, 0.0]).unwrap(),
        ],
        initial: Tensor::zeros(1, 2),
    };
    let a = attribute_row(&row, 0).unwrap();
    assert_eq!((a.predecessor, a.component), (2, 2));
}

#[test]
fn attribute_sequence_covers_every_later_step() {
    let mut rng = SeededRng::new(56);
    let (config, params, xs) = random_instance(CellKind::RanGeneral, 4, 3, 9, 1, &mut rng).unwrap();
    let traces = run_traces(&config, &params, &xs, None);
    let seq = attribute_sequence(&traces, 0).unwrap();
    let w = compute_weights(&traces, Basis::ProjectedInputs).unwrap();
    assert_eq!(seq.len(), 8);
    for a in &seq {
        assert!(a.predecessor >= 1 && a.predecessor < a.step);
        assert_eq!(*a, attribution(&w, a.step, 0).unwrap());
    }
}

#[test]
fn coupled_weights_sum_to_one() {
    let mut rng = SeededRng::new(57);
    for kind in [CellKind::GruStandard, CellKind::GruAlternate] {
        let (config, params, xs) = random_instance(kind, 6, 3, 40, 2, &mut rng).unwrap();
        let traces = run_traces(&config, &params, &xs, None);
        assert!(max_normalization_deviation(&traces).unwrap() <= 1e-10);
        assert!(normalization_check(&traces, 40).unwrap() <= 1e-10);
    }
    let one = vec![scalar_trace(0.3, 0.7, true)];
    assert_eq!(normalization_check(&one, 1).unwrap(), 0.0);
}

#[test]
fn normalization_needs_coupled_gates() {
    let mut rng = SeededRng::new(58);
    let (config, params, xs) = random_instance(CellKind::RanSimplified, 3, 3, 4, 1, &mut rng).unwrap();
    let traces = run_traces(&config, &params, &xs, None);
    assert!(matches!(normalization_check(&traces, 2), Err(Error::Contract(_))));
}

proptest! {
    #[test]
    fn ran_simplified_matches_recurrence(dh in 1usize..=64, steps in 1usize..=100, seed: u64) {
        let mut rng = SeededRng::new(seed);
        let (config, params, xs) = random_instance(CellKind::RanSimplified, dh, dh, steps, 1, &mut rng).unwrap();
        let report = verify_decomposition(&config, &params, &xs, None, None, 1e-8).unwrap();
        prop_assert!(report.pass, "{:?}", report);
    }

    #[test]
    fn weights_decay_and_stay_in_unit_interval(kind_idx in 0usize..8, steps in 1usize..25, seed: u64) {
        let kind = CellKind::ALL[kind_idx];
        let mut rng = SeededRng::new(seed);
        let (config, params, xs) = random_instance(kind, 4, 3, steps, 2, &mut rng).unwrap();
        let traces = run_traces(&config, &params, &xs, None);
        let w = compute_weights(&traces, Basis::natural_for(kind)).unwrap();
        for t in 1..=steps {
            for j in 1..=t {
                let cur = w.get(t, j).unwrap();
                prop_assert!(cur.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
                if j < t {
                    let prev = w.get(t - 1, j).unwrap();
                    prop_assert!(cur.data().iter().zip(prev.data()).all(|(a, b)| a <= b));
                    let expected = prev.hadamard(&traces[t - 1].forget_gate).unwrap();
                    prop_assert_eq!(cur, &expected);
                }
            }
        }
    }

    #[test]
    fn coupled_kinds_are_weighted_averages(kind_idx in 0usize..2, steps in 1usize..=50, dh in 1usize..10, seed: u64) {
        let kind = [CellKind::GruStandard, CellKind::GruAlternate][kind_idx];
        let mut rng = SeededRng::new(seed);
        let (config, params, xs) = random_instance(kind, dh, 3, steps, 1, &mut rng).unwrap();
        let traces = run_traces(&config, &params, &xs, None);
        prop_assert!(max_normalization_deviation(&traces).unwrap() <= 1e-8);
    }

    #[test]
    fn attribution_matches_exhaustive_scan(seed: u64) {
        let mut rng = SeededRng::new(seed);
        let row = random_weight_row(&mut rng);
        for b in 0..row.initial.rows() {
            let a = attribute_row(&row, b).unwrap();
            prop_assert_eq!((a.predecessor, a.component, a.value), attribution_oracle(&row, b));
        }
    }
}
