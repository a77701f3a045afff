//! Named experiment scales.

use std::str::FromStr;

use crate::agents::ArchConfig;
use crate::env::SimConfig;
use crate::error::{Error, Result};
use crate::trainer::TrainConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Profile {
    /// 4 edges, 12 sources, 100x100 map, 3000 epochs; sized for a single core.
    Desk,
    /// 4 edges, 30 sources, 200x200 map with the full default parameters.
    Paper,
    /// 8 edges, 60 sources, 300x300 map.
    PaperLarge,
}

impl FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Self::Desk),
            "paper" => Ok(Self::Paper),
            "paper-large" => Ok(Self::PaperLarge),
            other => Err(Error::Parse(format!("unknown profile `{other}` (desk, paper, paper-large)"))),
        }
    }
}

impl Profile {
    pub fn name(self) -> &'static str {
        match self {
            Self::Desk => "desk",
            Self::Paper => "paper",
            Self::PaperLarge => "paper-large",
        }
    }

    pub fn sim(self) -> SimConfig {
        match self {
            Self::Desk => SimConfig {
                map_width: 100,
                map_height: 100,
                num_sources: 12,
                num_edges: 4,
                r_move: 5,
                r_obs: 80,
                r_collect: 20.0,
                ..SimConfig::default()
            },
            Self::Paper => SimConfig::default(),
            Self::PaperLarge => SimConfig {
                map_width: 300,
                map_height: 300,
                num_sources: 60,
                num_edges: 8,
                ..SimConfig::default()
            },
        }
    }

    pub fn train(self) -> TrainConfig {
        match self {
            Self::Desk => TrainConfig {
                batch: 32,
                buffer_capacity: 1024,
                max_epochs: 3000,
                arch: ArchConfig { conv_channels: 4, conv_kernel: 3, hidden: 64 },
                ..TrainConfig::default()
            },
            Self::Paper | Self::PaperLarge => TrainConfig { max_epochs: 20_000, ..TrainConfig::default() },
        }
    }
}
