//! Parameter-count formatting and the reference figures it is compared to.

use ranlab::CellKind;

/// `6765200` → `"6,765,200"`.
pub fn with_separators(n: u64) -> String {
    let digits = n.to_string();
    let mut out = String::with_capacity(digits.len() + digits.len() / 3);
    for (i, c) in digits.chars().enumerate() {
        if i > 0 && (digits.len() - i).is_multiple_of(3) {
            out.push(',');
        }
        out.push(c);
    }
    out
}

/// Millions rounded to two decimals.
pub fn millions(n: u64) -> String {
    format!("{:.2}M", n as f64 / 1e6)
}

pub struct Reference {
    pub kind: CellKind,
    pub hidden: usize,
    pub input: usize,
    pub layers: usize,
    pub projection: Option<usize>,
    pub label: &'static str,
    /// Reported size in millions, weights and biases, embeddings and softmax excluded.
    pub millions: f64,
}

pub const REFERENCES: &[Reference] = &[
    Reference {
        kind: CellKind::Lstm,
        hidden: 650,
        input: 650,
        layers: 2,
        projection: None,
        label: "word-level medium LSTM",
        millions: 6.77,
    },
    Reference {
        kind: CellKind::RanGeneral,
        hidden: 650,
        input: 650,
        layers: 2,
        projection: None,
        label: "word-level medium RAN",
        millions: 4.23,
    },
    Reference {
        kind: CellKind::Lstm,
        hidden: 1500,
        input: 1500,
        layers: 2,
        projection: None,
        label: "word-level large LSTM",
        millions: 36.02,
    },
    Reference {
        kind: CellKind::RanGeneral,
        hidden: 1500,
        input: 1500,
        layers: 2,
        projection: None,
        label: "word-level large RAN",
        millions: 22.52,
    },
    Reference {
        kind: CellKind::Lstm,
        hidden: 2048,
        input: 512,
        layers: 1,
        projection: Some(512),
        label: "billion-word LSTM with projection",
        millions: 9.46,
    },
    Reference {
        kind: CellKind::RanGeneral,
        hidden: 2048,
        input: 512,
        layers: 1,
        projection: Some(512),
        label: "billion-word RAN with projection",
        millions: 6.30,
    },
];

pub fn reference_for(
    kind: CellKind,
    hidden: usize,
    input: usize,
    layers: usize,
    projection: Option<usize>,
) -> Option<&'static Reference> {
    REFERENCES.iter().find(|r| {
        r.kind == kind && r.hidden == hidden && r.input == input && r.layers == layers && r.projection == projection
    })
}
