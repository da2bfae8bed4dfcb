use serde::{Deserialize, Serialize};

use super::NnError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellKind {
    Srn,
    Lstm,
    Gru,
}

impl CellKind {
    /// Gate blocks stacked in the weight matrices: GRU `[z, r, h]`,
    /// LSTM `[i, f, g, o]`.
    pub fn gates(self) -> usize {
        match self {
            Self::Srn => 1,
            Self::Lstm => 4,
            Self::Gru => 3,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Srn => "srn",
            Self::Lstm => "lstm",
            Self::Gru => "gru",
        }
    }
}

impl std::str::FromStr for CellKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "srn" => Ok(Self::Srn),
            "lstm" => Ok(Self::Lstm),
            "gru" => Ok(Self::Gru),
            other => Err(format!("unknown cell kind `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    Srn,
    Lstm,
    Gru,
    DenseSoftmax,
    DenseLinear,
}

impl LayerKind {
    pub fn cell(self) -> Option<CellKind> {
        match self {
            Self::Srn => Some(CellKind::Srn),
            Self::Lstm => Some(CellKind::Lstm),
            Self::Gru => Some(CellKind::Gru),
            Self::DenseSoftmax | Self::DenseLinear => None,
        }
    }

    pub fn is_head(self) -> bool {
        self.cell().is_none()
    }
}

impl From<CellKind> for LayerKind {
    fn from(c: CellKind) -> Self {
        match c {
            CellKind::Srn => Self::Srn,
            CellKind::Lstm => Self::Lstm,
            CellKind::Gru => Self::Gru,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub units: usize,
}

impl LayerSpec {
    pub fn new(kind: LayerKind, units: usize) -> Self {
        Self { kind, units }
    }

    /// Two recurrent layers of `cell` followed by a softmax over `classes`.
    pub fn classifier(cell: CellKind, first: usize, second: usize, classes: usize) -> Vec<Self> {
        vec![Self::new(cell.into(), first), Self::new(cell.into(), second), Self::new(LayerKind::DenseSoftmax, classes)]
    }

    /// Two recurrent layers of `cell` followed by a single linear output.
    pub fn regressor(cell: CellKind, first: usize, second: usize) -> Vec<Self> {
        vec![Self::new(cell.into(), first), Self::new(cell.into(), second), Self::new(LayerKind::DenseLinear, 1)]
    }

    /// GRU 491 → GRU 99 → softmax(10).
    pub fn default_classifier() -> Vec<Self> {
        Self::classifier(CellKind::Gru, 491, 99, 10)
    }

    /// LSTM 376 → LSTM 69 → linear(1).
    pub fn default_regressor() -> Vec<Self> {
        Self::regressor(CellKind::Lstm, 376, 69)
    }

    pub fn validate_stack(spec: &[LayerSpec]) -> Result<(), NnError> {
        let bad = |m: &str| Err(NnError::InvalidSpec(m.to_string()));
        let Some((head, body)) = spec.split_last() else {
            return bad("empty layer list");
        };
        if !head.kind.is_head() {
            return bad("last layer must be dense_softmax or dense_linear");
        }
        if body.is_empty() {
            return bad("at least one recurrent layer is required");
        }
        if body.iter().any(|l| l.kind.is_head()) {
            return bad("exactly one head layer is allowed, and it must be last");
        }
        if spec.iter().any(|l| l.units == 0) {
            return bad("every layer needs at least one unit");
        }
        match head.kind {
            LayerKind::DenseLinear if head.units != 1 => bad("dense_linear head must have exactly one unit"),
            LayerKind::DenseSoftmax if head.units < 2 => bad("dense_softmax head needs at least two classes"),
            _ => Ok(()),
        }
    }
}
