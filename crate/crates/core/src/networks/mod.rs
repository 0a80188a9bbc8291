//! Attention generators, patch discriminators and their checkpoints.

pub mod checkpoint;
mod discriminator;
pub(crate) mod generator;

use serde::{Deserialize, Serialize};

pub use discriminator::{discriminate, Discriminator, DiscriminatorArch, DiscriminatorRole};
pub use generator::{
    fuse, generator_forward, FusionProducts, FusionVars, Generator, GeneratorArch,
    BACKGROUND_CHANNEL, N_DOWNSAMPLING,
};

use crate::error::Result;
use crate::rng::{rng_for, stream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetworkConfig {
    pub generator: GeneratorArch,
    pub discriminator: DiscriminatorArch,
    /// Standard deviation of the zero-mean Gaussian weight init.
    pub init_std: f64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            generator: GeneratorArch::default(),
            discriminator: DiscriminatorArch::default(),
            init_std: 0.02,
        }
    }
}

/// The five networks of one model.
#[derive(Debug, Clone)]
pub struct Bundles {
    /// healthy -> pathological
    pub g_p: Generator<f32>,
    /// pathological -> healthy
    pub g_h: Generator<f32>,
    pub d_h: Discriminator<f32>,
    pub d_p: Discriminator<f32>,
    pub d_f: Discriminator<f32>,
}

pub const BUNDLE_NAMES: [&str; 5] = ["G_P", "G_H", "D_H", "D_P", "D_F"];

/// Initializes all networks; each draws from its own stream derived from `seed`.
pub fn init_bundles(config: &NetworkConfig, seed: u64) -> Result<Bundles> {
    let std = config.init_std;
    let gen = |i: u64| Generator::new(config.generator.clone(), std, &mut rng_for(seed, &[stream::INIT, i]));
    let disc = |i: u64, role| {
        Discriminator::new(
            config.discriminator.clone(),
            role,
            std,
            &mut rng_for(seed, &[stream::INIT, i]),
        )
    };
    Ok(Bundles {
        g_p: gen(0)?,
        g_h: gen(1)?,
        d_h: disc(2, DiscriminatorRole::Healthy)?,
        d_p: disc(3, DiscriminatorRole::Pathological)?,
        d_f: disc(4, DiscriminatorRole::Foreground)?,
    })
}
