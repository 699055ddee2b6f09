use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::tensor::{Real, Tensor};

use super::{CellConfig, CellKind, CellParameters};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamRole {
    Weight,
    Bias,
    /// The bias of whichever gate multiplies `c_{t-1}`; starts at the
    /// configured forget bias instead of zero.
    ForgetBias,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamSpec {
    pub name: &'static str,
    pub rows: usize,
    pub cols: usize,
    pub role: ParamRole,
}

impl ParamSpec {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Names and shapes of every tensor a cell of this config owns.
pub fn parameter_specs(config: &CellConfig) -> Result<Vec<ParamSpec>> {
    use ParamRole::*;
    config.validate()?;
    let (dh, di, hp) = (config.hidden_dim, config.input_dim, config.recurrent_dim());
    let w = |name, rows, cols| ParamSpec {
        name,
        rows,
        cols,
        role: Weight,
    };
    let b = |name| ParamSpec {
        name,
        rows: 1,
        cols: dh,
        role: Bias,
    };
    let fb = |name| ParamSpec {
        name,
        rows: 1,
        cols: dh,
        role: ForgetBias,
    };

    let mut specs = match config.kind {
        CellKind::RanGeneral | CellKind::LstmLinearContent => vec![
            w("w_cx", dh, di),
            w("w_ih", dh, hp),
            w("w_ix", dh, di),
            b("b_i"),
            w("w_fh", dh, hp),
            w("w_fx", dh, di),
            fb("b_f"),
        ],
        CellKind::RanSimplified => vec![
            w("w_ic", dh, dh),
            w("w_ix", dh, di),
            b("b_i"),
            w("w_fc", dh, dh),
            w("w_fx", dh, di),
            fb("b_f"),
        ],
        CellKind::Lstm | CellKind::LstmNoOutputGate => {
            let mut v = vec![
                w("w_ch", dh, hp),
                w("w_cx", dh, di),
                b("b_c"),
                w("w_ih", dh, hp),
                w("w_ix", dh, di),
                b("b_i"),
                w("w_fh", dh, hp),
                w("w_fx", dh, di),
                fb("b_f"),
            ];
            if config.kind == CellKind::Lstm {
                v.extend([w("w_oh", dh, hp), w("w_ox", dh, di), b("b_o")]);
            }
            v
        }
        CellKind::GruStandard => vec![
            w("w_zh", dh, dh),
            w("w_zx", dh, di),
            b("b_z"),
            w("w_rh", dh, dh),
            w("w_rx", dh, di),
            b("b_r"),
            w("w_hh", dh, dh),
            w("w_hx", dh, di),
            b("b_h"),
        ],
        CellKind::GruAlternate => vec![
            w("w_ch", dh, dh),
            w("w_cx", dh, di),
            b("b_c"),
            w("w_ic", dh, dh),
            w("w_ix", dh, di),
            b("b_i"),
            w("w_oc", dh, dh),
            w("w_ox", dh, di),
            b("b_o"),
        ],
        CellKind::GruDerivedRan => vec![
            w("w_cx", dh, di),
            w("w_ic", dh, dh),
            w("w_ix", dh, di),
            b("b_i"),
            w("w_oc", dh, dh),
            w("w_ox", dh, di),
            fb("b_o"),
        ],
    };
    if let Some(p) = config.projection {
        specs.push(w("w_proj", p, dh));
    }
    Ok(specs)
}

/// Closed-form parameter count.
///
/// With `h` projected to width `p`, every matrix that reads `h_{t-1}` is
/// `d_h × p` instead of `d_h × d_h`, and the projection adds `d_h·p`.
pub fn count_parameters(config: &CellConfig, include_biases: bool) -> Result<u64> {
    config.validate()?;
    let dh = config.hidden_dim as u64;
    let di = config.input_dim as u64;
    let hp = config.recurrent_dim() as u64;
    // (matrices reading the recurrent input, matrices reading x_t, bias vectors)
    let (recurrent, input, biases) = match config.kind {
        CellKind::RanGeneral | CellKind::LstmLinearContent => (2, 3, 2),
        CellKind::RanSimplified => (2, 2, 2),
        CellKind::Lstm => (4, 4, 4),
        CellKind::LstmNoOutputGate => (3, 3, 3),
        CellKind::GruStandard | CellKind::GruAlternate => (3, 3, 3),
        CellKind::GruDerivedRan => (2, 3, 2),
    };
    let recurrent_width = match config.kind {
        CellKind::RanSimplified | CellKind::GruStandard | CellKind::GruAlternate | CellKind::GruDerivedRan => dh,
        _ => hp,
    };
    let mut n = recurrent * dh * recurrent_width + input * dh * di;
    if include_biases {
        n += biases * dh;
    }
    if let Some(p) = config.projection {
        n += dh * p as u64;
    }
    Ok(n)
}

/// Brute-force count: sums the sizes of the tensors a config actually owns.
pub fn enumerate_parameters(config: &CellConfig, include_biases: bool) -> Result<u64> {
    Ok(parameter_specs(config)?
        .iter()
        .filter(|s| include_biases || s.role == ParamRole::Weight)
        .map(|s| s.len() as u64)
        .sum())
}

/// Weights ~ Uniform(−scale, scale); biases zero except the forget-gate
/// bias, which starts at `forget_bias`.
pub fn init_parameters<T: Real>(
    config: &CellConfig,
    scale: f64,
    forget_bias: f64,
    rng: &mut SeededRng,
) -> Result<CellParameters<T>> {
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::config(format!("init scale must be positive, got {scale}")));
    }
    let specs = parameter_specs(config)?;
    let entries = specs
        .iter()
        .map(|spec| {
            let t = match spec.role {
                ParamRole::Weight => {
                    let data = (0..spec.len()).map(|_| T::of(rng.uniform(-scale, scale))).collect();
                    Tensor::from_vec_unchecked(spec.rows, spec.cols, data)
                }
                ParamRole::Bias => Tensor::zeros(spec.rows, spec.cols),
                ParamRole::ForgetBias => Tensor::filled(spec.rows, spec.cols, T::of(forget_bias)),
            };
            (spec.name, t)
        })
        .collect();
    Ok(CellParameters::from_entries_unchecked(entries))
}
