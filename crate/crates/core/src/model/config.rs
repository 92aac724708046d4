use std::fmt;
use std::str::FromStr;

use crate::history::HistoryConfig;
use crate::Error;

/// How a neighbor representation is combined with the edge relation before
/// aggregation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Composition {
    /// `h - r`
    Subtract,
    /// `h ⊙ r`
    Multiply,
}

impl fmt::Display for Composition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Composition::Subtract => "subtract",
            Composition::Multiply => "multiply",
        })
    }
}

impl FromStr for Composition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "subtract" | "sub" => Ok(Composition::Subtract),
            "multiply" | "mult" => Ok(Composition::Multiply),
            other => Err(Error::Config(format!("unknown composition `{other}`"))),
        }
    }
}

/// Switches that remove one component each.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub struct Ablations {
    /// Use the candidate representation of the query entity as the query
    /// representation.
    pub disable_query: bool,
    /// Score with a fully-connected layer on the query representation.
    pub disable_candidate: bool,
    /// Use the raw entity table instead of the background encoder output.
    pub disable_background: bool,
    /// Feed only the structural part to the recurrent encoders.
    pub disable_time: bool,
}

impl Ablations {
    pub fn is_full(&self) -> bool {
        *self == Ablations::default()
    }
}

/// Architecture hyperparameters.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    /// Entity and relation embedding size; also the recurrent hidden size.
    pub entity_dim: usize,
    pub time_dim: usize,
    pub history: HistoryConfig,
    /// Layers of the candidate-side graph convolution.
    pub omega1: usize,
    /// Layers of the background graph convolution.
    pub omega2: usize,
    pub kernels: usize,
    pub kernel_width: usize,
    pub dropout: f64,
    /// Apply `dropout` after candidate-side convolution layers as well.
    pub candidate_dropout: bool,
    pub composition: Composition,
    pub ablations: Ablations,
    /// Row-standardize the matcher's stacked input.
    pub standardize: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            entity_dim: 128,
            time_dim: 32,
            history: HistoryConfig {
                m: 5,
                n: 5,
                k: 4,
                window: None,
            },
            omega1: 2,
            omega2: 2,
            kernels: 50,
            kernel_width: 3,
            dropout: 0.2,
            candidate_dropout: true,
            composition: Composition::Subtract,
            ablations: Ablations::default(),
            standardize: false,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), Error> {
        let positive = [
            ("d_e", self.entity_dim),
            ("d_t", self.time_dim),
            ("m", self.history.m),
            ("n", self.history.n),
            ("k", self.history.k),
            ("omega1", self.omega1),
            ("omega2", self.omega2),
            ("kernels", self.kernels),
            ("kernel_width", self.kernel_width),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if self.kernel_width.is_multiple_of(2) {
            return Err(Error::Config("kernel_width must be odd".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if self.ablations.disable_query && self.ablations.disable_candidate {
            return Err(Error::Config(
                "disable_query and disable_candidate together leave nothing to score with".into(),
            ));
        }
        Ok(())
    }

    /// Input width of both recurrent encoders.
    pub fn gru_input_dim(&self) -> usize {
        if self.ablations.disable_time {
            self.entity_dim
        } else {
            self.entity_dim + self.time_dim
        }
    }

    /// Number of scalar parameters for a graph with `num_entities` entities
    /// and a relation table of `num_relations` rows (inverses included).
    pub fn param_count(&self, num_entities: usize, num_relations: usize) -> usize {
        let d = self.entity_dim;
        let a = &self.ablations;
        let gru = 3 * (self.gru_input_dim() + d) * d + 4 * d;
        let mut total = num_entities * d + num_relations * d;
        if !a.disable_time {
            total += 2 * self.time_dim;
        }
        if !a.disable_background {
            total += self.omega2 * 2 * d * d;
        }
        if !a.disable_query {
            total += gru + d;
        }
        if a.disable_candidate {
            total += d * num_entities + num_entities;
        } else {
            total += self.omega1 * 2 * d * d;
            total += gru;
            total += self.kernels * 2 * self.kernel_width + self.kernels;
            total += self.kernels * d * d + d;
        }
        total
    }
}
