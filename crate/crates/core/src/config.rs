//! Controller configuration held in tamper-resistant storage plus the
//! simulation parameters a scenario may override.

use serde::{Deserialize, Serialize};

use crate::app::AppKind;
use crate::cost::{round_estimate, CostModel};
use crate::platform::Layout;
use crate::rejuvenation::RejuvPolicy;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Hashing {
    #[serde(alias = "hardware_hash")]
    Hardware,
    #[serde(alias = "software_hash")]
    Software,
    Disabled,
}

impl Hashing {
    pub fn enabled(self) -> bool {
        self != Hashing::Disabled
    }

    /// `None` when disabled, `Some(software?)` otherwise.
    pub fn software(self) -> Option<bool> {
        match self {
            Hashing::Hardware => Some(false),
            Hashing::Software => Some(true),
            Hashing::Disabled => None,
        }
    }
}

/// Sliding-window admission limiter parameters.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RateLimit {
    /// Minimum cycles between two requests of one application. 0 disables.
    pub delta_min: u64,
    /// Maximum admissions per application per window.
    pub burst_max: u32,
    pub window: u64,
}

impl Default for RateLimit {
    fn default() -> Self {
        RateLimit { delta_min: 0, burst_max: 16, window: 1024 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlatformConfig {
    pub softcore: Vec<String>,
    /// Versions per softcore type, in the same order as `softcore`.
    pub version: Vec<Vec<String>>,
    pub min_tiles: u16,
    pub max_tiles: u16,
    /// Extra floorplanned slots usable for relocation.
    pub spare_slots: u16,
    pub stateful: bool,
    pub rejuv_policy: RejuvPolicy,
    pub checkpoint_max: usize,
    pub slot_size: usize,
    /// Round timer; `None` means ten fault-free round estimates.
    pub timer_budget: Option<u64>,
    pub hashing: Hashing,
    pub cost_model: CostModel,
    pub rate_limit: RateLimit,
    /// Count each tile's read of the broadcast as a message.
    pub per_reader_messages: bool,
}

impl Default for PlatformConfig {
    fn default() -> Self {
        PlatformConfig {
            softcore: vec!["microblaze".into()],
            version: vec![vec!["v1".into(), "v2".into(), "v3".into()]],
            min_tiles: 3,
            max_tiles: 5,
            spare_slots: 1,
            stateful: false,
            rejuv_policy: RejuvPolicy::default(),
            checkpoint_max: 100,
            slot_size: Layout::DEFAULT_SLOT_SIZE,
            timer_budget: None,
            hashing: Hashing::Hardware,
            cost_model: CostModel::default(),
            rate_limit: RateLimit::default(),
            per_reader_messages: false,
        }
    }
}

impl PlatformConfig {
    pub fn layout(&self) -> Layout {
        Layout { slot_size: self.slot_size, checkpoint_max: self.checkpoint_max }
    }

    /// Total floorplanned tile slots.
    pub fn pool_slots(&self) -> u16 {
        self.max_tiles + self.spare_slots
    }

    pub fn timer_for(&self, app: AppKind, req_len: usize) -> u64 {
        self.timer_budget.unwrap_or_else(|| {
            let rep_len = match app {
                AppKind::NullOp => 1,
                AppKind::Counter => 20,
                AppKind::HashChain => 32,
                AppKind::VectorMultiply => req_len.saturating_sub(8),
            };
            10 * round_estimate(&self.cost_model, app, req_len, rep_len, self.hashing.software())
        })
    }

    pub fn validate(&self, n: u16, f: u16) -> Result<(), String> {
        self.cost_model.validate()?;
        if self.softcore.is_empty() || self.version.len() != self.softcore.len() {
            return Err("every softcore type needs a version list".into());
        }
        if self.version.iter().any(|v| v.is_empty()) {
            return Err("empty version list".into());
        }
        if n != 2 * f + 1 {
            return Err(format!("n = {n} but 2f+1 = {}", 2 * f + 1));
        }
        if self.min_tiles < 3 || self.min_tiles > self.max_tiles {
            return Err(format!("tile bounds [{}, {}] invalid", self.min_tiles, self.max_tiles));
        }
        if n < self.min_tiles || n > self.max_tiles {
            return Err(format!("n = {n} outside [{}, {}]", self.min_tiles, self.max_tiles));
        }
        if self.checkpoint_max == 0 {
            return Err("checkpoint_max must be positive".into());
        }
        if self.slot_size < 128 {
            return Err("slot_size must be at least 128 bytes".into());
        }
        Ok(())
    }
}
