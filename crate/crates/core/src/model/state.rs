use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::ModelConfig;
use crate::autodiff::{ParamId, ParamStore, Tensor};
use crate::Error;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TimeParams {
    /// `[1, d_t]`
    pub unit: ParamId,
    /// `[d_t]`
    pub bias: ParamId,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GcnLayer {
    /// Applied to composed neighbor messages.
    pub w_neighbor: ParamId,
    /// Applied to the entity's own row.
    pub w_self: ParamId,
}

/// Single-layer GRU with separate per-gate matrices.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GruParams {
    pub w_xr: ParamId,
    pub w_xz: ParamId,
    pub w_xn: ParamId,
    pub w_hr: ParamId,
    pub w_hz: ParamId,
    pub w_hn: ParamId,
    pub b_r: ParamId,
    pub b_z: ParamId,
    pub b_xn: ParamId,
    pub b_hn: ParamId,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MatcherParams {
    /// `[kernels, 2, kernel_width]`
    pub kernel: ParamId,
    pub kernel_bias: ParamId,
    /// `[kernels * d_e, d_e]`
    pub fc: ParamId,
    pub fc_bias: ParamId,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DirectParams {
    /// `[d_e, |E|]`
    pub weight: ParamId,
    pub bias: ParamId,
}

/// Handles to every parameter group; optional groups are absent when the
/// matching ablation is on.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModelParams {
    pub entity: ParamId,
    pub relation: ParamId,
    /// Shared by the query and candidate encoders.
    pub time: Option<TimeParams>,
    pub background: Vec<GcnLayer>,
    pub candidate: Vec<GcnLayer>,
    pub query_gru: Option<GruParams>,
    pub query_h0: Option<ParamId>,
    pub candidate_gru: Option<GruParams>,
    pub matcher: Option<MatcherParams>,
    pub direct: Option<DirectParams>,
}

/// All learnable values plus the configuration that shaped them.
#[derive(Clone, Debug)]
pub struct ModelState {
    config: ModelConfig,
    num_entities: usize,
    num_relations: usize,
    store: ParamStore,
    params: ModelParams,
}

struct Init<'a> {
    store: &'a mut ParamStore,
    rng: ChaCha8Rng,
}

impl Init<'_> {
    fn uniform(&mut self, name: &str, shape: Vec<usize>, bound: f64) -> Result<ParamId, Error> {
        let n = shape.iter().product();
        let values = (0..n).map(|_| self.rng.gen_range(-bound..=bound)).collect();
        Ok(self.store.add(name, Tensor::new(shape, values)?)?)
    }

    fn xavier(&mut self, name: &str, rows: usize, cols: usize) -> Result<ParamId, Error> {
        let bound = (6.0 / (rows + cols) as f64).sqrt();
        self.uniform(name, vec![rows, cols], bound)
    }

    fn zeros(&mut self, name: &str, shape: Vec<usize>) -> Result<ParamId, Error> {
        Ok(self.store.add(name, Tensor::zeros(shape))?)
    }

    fn gcn_stack(&mut self, prefix: &str, layers: usize, d: usize) -> Result<Vec<GcnLayer>, Error> {
        (0..layers)
            .map(|l| {
                Ok(GcnLayer {
                    w_neighbor: self.xavier(&format!("{prefix}.{l}.w_neighbor"), d, d)?,
                    w_self: self.xavier(&format!("{prefix}.{l}.w_self"), d, d)?,
                })
            })
            .collect()
    }

    fn gru(&mut self, prefix: &str, input: usize, hidden: usize) -> Result<GruParams, Error> {
        let b = 1.0 / (hidden as f64).sqrt();
        let mut w = |name: &str, rows: usize| self.uniform(&format!("{prefix}.{name}"), vec![rows, hidden], b);
        let (w_xr, w_xz, w_xn) = (w("w_xr", input)?, w("w_xz", input)?, w("w_xn", input)?);
        let (w_hr, w_hz, w_hn) = (w("w_hr", hidden)?, w("w_hz", hidden)?, w("w_hn", hidden)?);
        let mut bias = |name: &str| self.uniform(&format!("{prefix}.{name}"), vec![hidden], b);
        Ok(GruParams {
            w_xr,
            w_xz,
            w_xn,
            w_hr,
            w_hz,
            w_hn,
            b_r: bias("b_r")?,
            b_z: bias("b_z")?,
            b_xn: bias("b_xn")?,
            b_hn: bias("b_hn")?,
        })
    }
}

impl ModelState {
    /// Randomly initialized parameters for `num_entities` entities and a
    /// relation table of `num_relations` rows.
    pub fn new(config: ModelConfig, num_entities: usize, num_relations: usize, seed: u64) -> Result<Self, Error> {
        config.validate()?;
        if num_entities == 0 || num_relations == 0 {
            return Err(Error::Config("entity and relation counts must be positive".into()));
        }
        let d = config.entity_dim;
        let a = config.ablations;
        let mut store = ParamStore::new();
        let mut init = Init {
            store: &mut store,
            rng: ChaCha8Rng::seed_from_u64(seed),
        };

        let entity = init.xavier("entity_embeddings", num_entities, d)?;
        let relation = init.xavier("relation_embeddings", num_relations, d)?;
        let time = if a.disable_time {
            None
        } else {
            Some(TimeParams {
                unit: init.uniform("time.unit", vec![1, config.time_dim], 1.0)?,
                bias: init.uniform("time.bias", vec![config.time_dim], 1.0)?,
            })
        };
        let background = if a.disable_background {
            Vec::new()
        } else {
            init.gcn_stack("background", config.omega2, d)?
        };
        let (query_gru, query_h0) = if a.disable_query {
            (None, None)
        } else {
            let gru = init.gru("query_gru", config.gru_input_dim(), d)?;
            let h0 = init.uniform("query_gru.h0", vec![1, d], 1.0 / (d as f64).sqrt())?;
            (Some(gru), Some(h0))
        };
        let (candidate, candidate_gru, matcher, direct) = if a.disable_candidate {
            let direct = DirectParams {
                weight: init.xavier("direct.weight", d, num_entities)?,
                bias: init.zeros("direct.bias", vec![num_entities])?,
            };
            (Vec::new(), None, None, Some(direct))
        } else {
            let stack = init.gcn_stack("candidate", config.omega1, d)?;
            let gru = init.gru("candidate_gru", config.gru_input_dim(), d)?;
            let fan_in = (2 * config.kernel_width) as f64;
            let kb = 1.0 / fan_in.sqrt();
            let fb = 1.0 / ((config.kernels * d) as f64).sqrt();
            let matcher = MatcherParams {
                kernel: init.uniform("matcher.kernel", vec![config.kernels, 2, config.kernel_width], kb)?,
                kernel_bias: init.uniform("matcher.kernel_bias", vec![config.kernels], kb)?,
                fc: init.uniform("matcher.fc", vec![config.kernels * d, d], fb)?,
                fc_bias: init.uniform("matcher.fc_bias", vec![d], fb)?,
            };
            (stack, Some(gru), Some(matcher), None)
        };

        let params = ModelParams {
            entity,
            relation,
            time,
            background,
            candidate,
            query_gru,
            query_h0,
            candidate_gru,
            matcher,
            direct,
        };
        Ok(ModelState {
            config,
            num_entities,
            num_relations,
            store,
            params,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn num_entities(&self) -> usize {
        self.num_entities
    }

    pub fn num_relations(&self) -> usize {
        self.num_relations
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn num_scalars(&self) -> usize {
        self.store.num_scalars()
    }

    /// Overwrites parameter values by name. Every parameter of this state
    /// must be present with the same shape.
    pub fn load_values<'a>(&mut self, blocks: impl IntoIterator<Item = (&'a str, &'a Tensor)>) -> Result<(), Error> {
        let mut seen = vec![false; self.store.len()];
        for (name, tensor) in blocks {
            let id = self
                .store
                .id(name)
                .ok_or_else(|| Error::Model(format!("unexpected parameter `{name}`")))?;
            let slot = self.store.get_mut(id).tensor_mut();
            if slot.shape() != tensor.shape() {
                return Err(Error::Model(format!(
                    "parameter `{name}` has shape {:?}, expected {:?}",
                    tensor.shape(),
                    slot.shape()
                )));
            }
            slot.values_mut().copy_from_slice(tensor.values());
            seen[id.index()] = true;
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            let name = self.store.iter().nth(missing).map(|(_, p)| p.name().to_string());
            return Err(Error::Model(format!("parameter `{}` missing", name.unwrap_or_default())));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Ablations;

    fn small() -> ModelConfig {
        ModelConfig {
            entity_dim: 6,
            time_dim: 3,
            kernels: 4,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn parameter_count_matches_formula_for_every_toggle() {
        let toggles = [
            Ablations::default(),
            Ablations { disable_query: true, ..Default::default() },
            Ablations { disable_candidate: true, ..Default::default() },
            Ablations { disable_background: true, ..Default::default() },
            Ablations { disable_time: true, ..Default::default() },
        ];
        for ablations in toggles {
            let cfg = ModelConfig { ablations, ..small() };
            let state = ModelState::new(cfg.clone(), 7, 4, 1).unwrap();
            assert_eq!(state.num_scalars(), cfg.param_count(7, 4), "{ablations:?}");
        }
    }

    #[test]
    fn same_seed_same_values() {
        let a = ModelState::new(small(), 5, 2, 9).unwrap();
        let b = ModelState::new(small(), 5, 2, 9).unwrap();
        let c = ModelState::new(small(), 5, 2, 10).unwrap();
        let vals = |s: &ModelState| s.store().iter().flat_map(|(_, p)| p.tensor().values().to_vec()).collect::<Vec<_>>();
        assert_eq!(vals(&a), vals(&b));
        assert_ne!(vals(&a), vals(&c));
    }

    #[test]
    fn conflicting_toggles_rejected() {
        let cfg = ModelConfig {
            ablations: Ablations {
                disable_query: true,
                disable_candidate: true,
                ..Default::default()
            },
            ..small()
        };
        assert!(ModelState::new(cfg, 5, 2, 0).is_err());
    }
}
