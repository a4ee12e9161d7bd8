use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backbone::NeedleLayout;
use crate::error::{Error, Result};
use crate::retaining::TrainingExample;

/// Where the needle goes inside the haystack.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NeedlePosition {
    #[default]
    UniformRandom,
    At(usize),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PasskeyTaskConfig {
    /// Prompt length including the needle and the closing marker.
    pub haystack_len: usize,
    pub needle_len: usize,
    pub needle_position: NeedlePosition,
    pub seed: u64,
}

impl Default for PasskeyTaskConfig {
    fn default() -> Self {
        PasskeyTaskConfig {
            haystack_len: 1024,
            needle_len: 4,
            needle_position: NeedlePosition::UniformRandom,
            seed: 0,
        }
    }
}

/// One generated retrieval instance.
#[derive(Clone, Debug, PartialEq)]
pub struct PasskeyInstance {
    pub example: TrainingExample,
    /// Prompt positions holding the needle, in order.
    pub needle_positions: Vec<usize>,
    /// The tokens a correct model emits after the marker.
    pub expected: Vec<u32>,
}

/// `filler ∥ needle ∥ filler ∥ marker`, with the needle as the answer.
pub fn gen_passkey(cfg: &PasskeyTaskConfig, layout: &NeedleLayout) -> Result<PasskeyInstance> {
    if cfg.needle_len == 0 {
        return Err(Error::config("needle_len must be at least 1"));
    }
    if cfg.needle_len > layout.slots {
        return Err(Error::config(format!(
            "needle_len {} exceeds the {} needle slots of the vocabulary",
            cfg.needle_len, layout.slots
        )));
    }
    if cfg.needle_len + 1 >= cfg.haystack_len {
        return Err(Error::config(format!(
            "needle of {} tokens plus marker does not fit a haystack of {}",
            cfg.needle_len, cfg.haystack_len
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let last_start = cfg.haystack_len - 1 - cfg.needle_len;
    let start = match cfg.needle_position {
        NeedlePosition::UniformRandom => rng.random_range(0..=last_start),
        NeedlePosition::At(p) if p <= last_start => p,
        NeedlePosition::At(p) => {
            return Err(Error::config(format!(
                "needle at {p} runs past position {last_start}"
            )))
        }
    };
    let expected: Vec<u32> = (0..cfg.needle_len)
        .map(|s| layout.needle_token(s, rng.random_range(0..layout.digits)))
        .collect();
    let fillers = layout.filler_count() as u32;
    let mut prompt = Vec::with_capacity(cfg.haystack_len);
    for p in 0..cfg.haystack_len - 1 {
        if p >= start && p < start + cfg.needle_len {
            prompt.push(expected[p - start]);
        } else {
            prompt.push(rng.random_range(0..fillers));
        }
    }
    prompt.push(layout.marker());
    Ok(PasskeyInstance {
        example: TrainingExample::new(prompt, expected.clone())?,
        needle_positions: (start..start + cfg.needle_len).collect(),
        expected,
    })
}

/// `count` instances with seeds `base_seed, base_seed + 1, …`.
pub fn gen_passkey_set(
    cfg: &PasskeyTaskConfig,
    layout: &NeedleLayout,
    count: usize,
) -> Result<Vec<PasskeyInstance>> {
    (0..count as u64)
        .map(|i| {
            gen_passkey(
                &PasskeyTaskConfig {
                    seed: cfg.seed.wrapping_add(i),
                    ..cfg.clone()
                },
                layout,
            )
        })
        .collect()
}
