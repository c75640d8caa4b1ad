//! Random hyperparameter search over Fixed / Range / Choice spaces.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::TrainConfig;
use crate::net::NetworkConfig;
use crate::{math, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Scale {
    Linear,
    Log,
}

/// How one hyperparameter is drawn.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum ParamSpace {
    Fixed(f64),
    /// Uniform on `[low, high]`, or log-uniform with [`Scale::Log`]. Without
    /// an explicit scale, rate-like parameters use log and the rest linear.
    Range {
        low: f64,
        high: f64,
        #[cfg_attr(feature = "serde", serde(default))]
        scale: Option<Scale>,
    },
    Choice(Vec<f64>),
}

const KNOWN: &[&str] = &[
    "learning_rate",
    "weight_decay",
    "alpha",
    "hops",
    "attention_dropout",
    "feature_dropout",
    "dropout",
    "num_blocks",
    "model_dim",
    "heads",
    "ffn_dim",
    "batch_size",
];

const INTEGER: &[&str] = &["hops", "num_blocks", "model_dim", "heads", "ffn_dim", "batch_size"];

fn default_scale(name: &str) -> Scale {
    match name {
        "learning_rate" | "weight_decay" => Scale::Log,
        _ => Scale::Linear,
    }
}

fn as_count(name: &str, v: f64) -> Result<usize> {
    if v < 0.0 || math::trunc(v) != v || !v.is_finite() {
        return Err(Error::InvalidConfig(format!("{name} = {v} is not a count")));
    }
    Ok(v as usize)
}

/// Named parameter spaces, sampled in name order.
#[derive(Debug, Clone, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(transparent))]
pub struct SearchSpace {
    pub params: BTreeMap<String, ParamSpace>,
}

impl SearchSpace {
    pub fn with(mut self, name: &str, space: ParamSpace) -> Self {
        self.params.insert(name.into(), space);
        self
    }

    /// Citation-network space: fixed width 512, 8 heads, 6 blocks.
    pub fn node_preset() -> Self {
        let range = |low, high| ParamSpace::Range { low, high, scale: None };
        Self::default()
            .with("model_dim", ParamSpace::Fixed(512.0))
            .with("heads", ParamSpace::Fixed(8.0))
            .with("num_blocks", ParamSpace::Fixed(6.0))
            .with("learning_rate", range(5e-5, 1e-3))
            .with("alpha", range(0.05, 0.6))
            .with("dropout", range(0.1, 0.6))
            .with("weight_decay", range(1e-6, 1e-5))
            .with("hops", ParamSpace::Choice((2..=10).map(f64::from).collect()))
    }

    /// Knowledge-graph space.
    pub fn kg_preset() -> Self {
        let range = |low, high| ParamSpace::Range { low, high, scale: None };
        Self::default()
            .with("num_blocks", ParamSpace::Choice(alloc::vec![2.0, 3.0]))
            .with("model_dim", ParamSpace::Choice(alloc::vec![256.0, 512.0, 768.0]))
            .with("batch_size", ParamSpace::Choice(alloc::vec![1024.0, 2048.0, 3072.0]))
            .with("heads", ParamSpace::Choice(alloc::vec![4.0, 8.0]))
            .with("hops", ParamSpace::Choice((2..=6).map(f64::from).collect()))
            .with("learning_rate", range(1e-4, 5e-3))
            .with("alpha", range(0.05, 0.6))
            .with("dropout", range(0.1, 0.6))
            .with("weight_decay", range(1e-10, 1e-8))
    }

    pub fn validate(&self) -> Result<()> {
        for (name, space) in &self.params {
            if !KNOWN.contains(&name.as_str()) {
                return Err(Error::InvalidConfig(format!("unknown search parameter `{name}`")));
            }
            match space {
                ParamSpace::Fixed(v) if !v.is_finite() => {
                    return Err(Error::InvalidConfig(format!("{name}: non-finite value")));
                }
                ParamSpace::Range { low, high, scale } => {
                    let scale = scale.unwrap_or_else(|| default_scale(name));
                    if !(low.is_finite() && high.is_finite() && low <= high) {
                        return Err(Error::InvalidConfig(format!("{name}: invalid bounds [{low}, {high}]")));
                    }
                    if scale == Scale::Log && *low <= 0.0 {
                        return Err(Error::InvalidConfig(format!(
                            "{name}: log-uniform range needs positive bounds"
                        )));
                    }
                    if INTEGER.contains(&name.as_str()) {
                        return Err(Error::InvalidConfig(format!(
                            "{name}: integer parameters take Fixed or Choice"
                        )));
                    }
                }
                ParamSpace::Choice(c) if c.is_empty() => {
                    return Err(Error::InvalidConfig(format!("{name}: empty choice")));
                }
                _ => {}
            }
        }
        Ok(())
    }

    /// Draws one value per parameter, in name order.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> BTreeMap<String, f64> {
        self.params
            .iter()
            .map(|(name, space)| {
                let v = match space {
                    ParamSpace::Fixed(v) => *v,
                    ParamSpace::Range { low, high, scale } => {
                        let u: f64 = rng.gen();
                        match scale.unwrap_or_else(|| default_scale(name)) {
                            Scale::Linear => low + u * (high - low),
                            Scale::Log => {
                                let (a, b) = (math::ln(*low), math::ln(*high));
                                math::exp(a + u * (b - a)).clamp(*low, *high)
                            }
                        }
                    }
                    ParamSpace::Choice(c) => c[rng.gen_range(0..c.len())],
                };
                (name.clone(), v)
            })
            .collect()
    }
}

/// Writes sampled values into the configs.
pub fn apply(values: &BTreeMap<String, f64>, net: &mut NetworkConfig, train: &mut TrainConfig) -> Result<()> {
    for (name, &v) in values {
        match name.as_str() {
            "learning_rate" => train.learning_rate = v,
            "weight_decay" => train.weight_decay = v,
            "alpha" => net.diffusion.alpha = v,
            "hops" => net.diffusion.hops = as_count(name, v)?,
            "attention_dropout" => net.attention_dropout = v,
            "feature_dropout" => net.feature_dropout = v,
            "dropout" => {
                net.attention_dropout = v;
                net.feature_dropout = v;
            }
            "num_blocks" => net.num_blocks = as_count(name, v)?,
            "model_dim" => net.model_dim = as_count(name, v)?,
            "heads" => net.heads = as_count(name, v)?,
            "ffn_dim" => net.ffn_dim = Some(as_count(name, v)?),
            "batch_size" => train.batch_size = as_count(name, v)?,
            other => return Err(Error::InvalidConfig(format!("unknown search parameter `{other}`"))),
        }
    }
    net.validate()?;
    train.validate()
}

/// One sampled configuration.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Trial {
    pub index: usize,
    pub values: BTreeMap<String, f64>,
    pub network: NetworkConfig,
    pub train: TrainConfig,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TrialResult {
    pub trial: Trial,
    pub val_metric: f64,
    pub test_metric: Option<f64>,
}

/// Samples `trials` configurations from a generator seeded with `seed`.
///
/// Every trial trains with the base training seed, so trials differ only
/// in their sampled hyperparameters.
pub fn sample_trials(
    space: &SearchSpace,
    network: &NetworkConfig,
    train: &TrainConfig,
    trials: usize,
    seed: u64,
) -> Result<Vec<Trial>> {
    space.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..trials)
        .map(|index| {
            let values = space.sample(&mut rng);
            let mut net = network.clone();
            let mut tc = train.clone();
            apply(&values, &mut net, &mut tc)?;
            Ok(Trial {
                index,
                values,
                network: net,
                train: tc,
            })
        })
        .collect()
}

/// Sorts by validation metric (best first), ties by trial index.
pub fn rank_trials(mut results: Vec<TrialResult>) -> Vec<TrialResult> {
    results.sort_by(|a, b| {
        b.val_metric
            .total_cmp(&a.val_metric)
            .then(a.trial.index.cmp(&b.trial.index))
    });
    results
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixed_space_gives_identical_trials() {
        let space = SearchSpace::default()
            .with("alpha", ParamSpace::Fixed(0.2))
            .with("hops", ParamSpace::Fixed(4.0));
        let t = sample_trials(&space, &NetworkConfig::default(), &TrainConfig::default(), 3, 9).unwrap();
        assert_eq!(t.len(), 3);
        assert!(t.iter().all(|x| x.network == t[0].network && x.train == t[0].train));
        assert_eq!(t[0].network.diffusion.hops, 4);
    }

    #[test]
    fn node_preset_hop_choices() {
        let p = SearchSpace::node_preset();
        assert_eq!(
            p.params["hops"],
            ParamSpace::Choice(alloc::vec![2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0, 10.0])
        );
    }

    #[test]
    fn log_range_within_bounds() {
        let space = SearchSpace::default().with(
            "learning_rate",
            ParamSpace::Range {
                low: 5e-5,
                high: 1e-3,
                scale: None,
            },
        );
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let v = space.sample(&mut rng)["learning_rate"];
            assert!((5e-5..=1e-3).contains(&v));
        }
    }

    #[test]
    fn invalid_spaces_rejected() {
        let bad = SearchSpace::default().with(
            "alpha",
            ParamSpace::Range {
                low: 0.5,
                high: 0.1,
                scale: None,
            },
        );
        assert!(bad.validate().is_err());
        let bad = SearchSpace::default().with("momentum", ParamSpace::Fixed(0.9));
        assert!(bad.validate().is_err());
        let bad = SearchSpace::default().with("hops", ParamSpace::Choice(alloc::vec![]));
        assert!(bad.validate().is_err());
        let bad = SearchSpace::default().with(
            "weight_decay",
            ParamSpace::Range {
                low: 0.0,
                high: 1e-5,
                scale: None,
            },
        );
        assert!(bad.validate().is_err());
    }

    #[test]
    fn ranking_is_by_validation() {
        let t = sample_trials(
            &SearchSpace::default(),
            &NetworkConfig::default(),
            &TrainConfig::default(),
            3,
            0,
        )
        .unwrap();
        let results = t
            .into_iter()
            .zip([0.5, 0.9, 0.5])
            .map(|(trial, v)| TrialResult {
                trial,
                val_metric: v,
                test_metric: None,
            })
            .collect();
        let order: Vec<usize> = rank_trials(results).iter().map(|r| r.trial.index).collect();
        assert_eq!(order, [1, 0, 2]);
    }
}
