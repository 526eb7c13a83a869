use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAX_LEVEL: u8 = 2;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CurriculumConfig {
    pub enabled: bool,
    pub start_level: u8,
    pub window: usize,
    pub promote_at: f64,
    pub demote_below: f64,
}

impl Default for CurriculumConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            start_level: 0,
            window: 100,
            promote_at: 0.8,
            demote_below: 0.3,
        }
    }
}

impl CurriculumConfig {
    pub fn validate(&self) -> Result<()> {
        if self.start_level > MAX_LEVEL {
            return Err(Error::config_at("env.curriculum.start_level", "must be 0, 1 or 2"));
        }
        if self.window == 0 {
            return Err(Error::config_at("env.curriculum.window", "must be positive"));
        }
        if !(self.demote_below < self.promote_at) {
            return Err(Error::config_at("env.curriculum", "demote_below must be below promote_at"));
        }
        Ok(())
    }
}

/// Success-rate driven difficulty level shared by a set of environments.
#[derive(Clone, Debug, PartialEq)]
pub struct Curriculum {
    pub cfg: CurriculumConfig,
    level: u8,
    recent: VecDeque<bool>,
}

impl Curriculum {
    pub fn new(cfg: CurriculumConfig) -> Self {
        Self {
            level: if cfg.enabled { cfg.start_level } else { MAX_LEVEL },
            cfg,
            recent: VecDeque::new(),
        }
    }

    pub fn level(&self) -> u8 {
        self.level
    }

    /// Success rate over the current window, if it is full.
    pub fn window_rate(&self) -> Option<f64> {
        (self.recent.len() >= self.cfg.window)
            .then(|| self.recent.iter().filter(|s| **s).count() as f64 / self.recent.len() as f64)
    }

    /// Records one finished episode and applies the promotion rule once the window is full.
    pub fn record(&mut self, success: bool) -> u8 {
        if !self.cfg.enabled {
            return self.level;
        }
        self.recent.push_back(success);
        while self.recent.len() > self.cfg.window {
            self.recent.pop_front();
        }
        if let Some(rate) = self.window_rate() {
            let next = curriculum_update(self.level, rate, &self.cfg);
            if next != self.level {
                self.level = next;
                self.recent.clear();
            }
        }
        self.level
    }
}

/// Promote at `rate >= promote_at`, demote below `demote_below`, otherwise hold.
pub fn curriculum_update(level: u8, recent_success_rate: f64, cfg: &CurriculumConfig) -> u8 {
    if recent_success_rate >= cfg.promote_at {
        (level + 1).min(MAX_LEVEL)
    } else if recent_success_rate < cfg.demote_below {
        level.saturating_sub(1)
    } else {
        level
    }
}
