//! Flat `key = value` run configuration shared by every subsystem.
//!
//! One greppable key space, no nesting. Unknown keys are rejected so a typo
//! never silently falls back to a default.

use std::fmt;
use std::path::Path;

/// All hyperparameters with their defaults.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub d_model: usize,
    pub n_enc: usize,
    pub n_hfif: usize,
    pub n_lfbf: usize,
    pub k_neighbors: usize,
    pub s_intentions: usize,
    pub k_modalities: usize,
    pub l_roads: usize,
    pub t_future: usize,
    pub t_history: usize,
    pub n_heads: usize,
    pub agent_mlp_dim: usize,
    pub road_mlp_dim: usize,
    pub completion_mlp_dim: usize,
    pub traj_mlp_dim: usize,
    pub behavior_mlp_dim: usize,
    pub lr: f64,
    pub batch: usize,
    pub epochs: usize,
    pub lr_decay_start: usize,
    pub lr_decay_period: usize,
    pub weight_decay: f64,
    pub grad_clip: f64,
    pub smooth_l1_beta: f64,
    pub miss_threshold: f64,
    pub metric_agent_sum: bool,
    pub seed: u64,
    pub dt: f64,
    pub interaction_dist: f64,
    pub background_agents: usize,
    pub grid_extent_x: f64,
    pub grid_extent_y: f64,
    pub grid_cell: f64,
    pub anchor_hidden: usize,
    pub anchor_epochs: usize,
    pub anchor_lr: f64,
    pub loss_sum_steps: bool,
    pub hfif_traj_loss: bool,
    pub use_anchor_scores: bool,
    pub hfif_fusion: bool,
    pub lfbf_fusion: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            d_model: 256,
            n_enc: 6,
            n_hfif: 1,
            n_lfbf: 3,
            k_neighbors: 16,
            s_intentions: 100,
            k_modalities: 6,
            l_roads: 256,
            t_future: 80,
            t_history: 11,
            n_heads: 8,
            agent_mlp_dim: 256,
            road_mlp_dim: 64,
            completion_mlp_dim: 256,
            traj_mlp_dim: 512,
            behavior_mlp_dim: 64,
            lr: 1e-4,
            batch: 80,
            epochs: 30,
            lr_decay_start: 20,
            lr_decay_period: 2,
            weight_decay: 0.01,
            grad_clip: 10.0,
            smooth_l1_beta: 1.0,
            miss_threshold: 2.0,
            metric_agent_sum: false,
            seed: 0,
            dt: 0.1,
            interaction_dist: 8.0,
            background_agents: 2,
            grid_extent_x: 60.0,
            grid_extent_y: 40.0,
            grid_cell: 2.0,
            anchor_hidden: 64,
            anchor_epochs: 10,
            anchor_lr: 1e-3,
            loss_sum_steps: false,
            hfif_traj_loss: false,
            use_anchor_scores: false,
            hfif_fusion: true,
            lfbf_fusion: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ConfigError {
    UnknownKey { key: String, line: usize },
    BadValue { key: String, line: usize, msg: String },
    MissingEquals { line: usize },
    Invalid(String),
    Io(String),
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConfigError::UnknownKey { key, line } => write!(f, "config line {line}: unknown key '{key}'"),
            ConfigError::BadValue { key, line, msg } => write!(f, "config line {line}: bad value for '{key}': {msg}"),
            ConfigError::MissingEquals { line } => write!(f, "config line {line}: expected 'key = value'"),
            ConfigError::Invalid(msg) => write!(f, "invalid config: {msg}"),
            ConfigError::Io(msg) => write!(f, "config i/o: {msg}"),
        }
    }
}

impl std::error::Error for ConfigError {}

macro_rules! config_keys {
    ($($key:ident : $kind:ident),+ $(,)?) => {
        impl RunConfig {
            /// Apply one parsed `key = value` assignment.
            fn set(&mut self, key: &str, value: &str, line: usize) -> Result<(), ConfigError> {
                match key {
                    $(stringify!($key) => {
                        self.$key = parse_value!($kind, key, value, line)?;
                        Ok(())
                    })+
                    _ => Err(ConfigError::UnknownKey { key: key.to_string(), line }),
                }
            }

            /// Canonical text form: every key once, declaration order.
            pub fn to_canonical_string(&self) -> String {
                let mut out = String::new();
                $(out.push_str(&format!("{} = {}\n", stringify!($key), render_value!($kind, self.$key)));)+
                out
            }
        }
    };
}

macro_rules! parse_value {
    (usize, $key:ident, $value:ident, $line:ident) => {
        $value.parse::<usize>().map_err(|e| ConfigError::BadValue { key: $key.to_string(), line: $line, msg: e.to_string() })
    };
    (u64, $key:ident, $value:ident, $line:ident) => {
        $value.parse::<u64>().map_err(|e| ConfigError::BadValue { key: $key.to_string(), line: $line, msg: e.to_string() })
    };
    (f64, $key:ident, $value:ident, $line:ident) => {
        $value.parse::<f64>().map_err(|e| ConfigError::BadValue { key: $key.to_string(), line: $line, msg: e.to_string() })
    };
    (bool, $key:ident, $value:ident, $line:ident) => {
        match $value {
            "true" => Ok(true),
            "false" => Ok(false),
            other => Err(ConfigError::BadValue {
                key: $key.to_string(),
                line: $line,
                msg: format!("expected true/false, got '{other}'"),
            }),
        }
    };
}

macro_rules! render_value {
    (f64, $v:expr) => {
        format!("{:?}", $v)
    };
    ($kind:ident, $v:expr) => {
        format!("{}", $v)
    };
}

config_keys! {
    d_model: usize,
    n_enc: usize,
    n_hfif: usize,
    n_lfbf: usize,
    k_neighbors: usize,
    s_intentions: usize,
    k_modalities: usize,
    l_roads: usize,
    t_future: usize,
    t_history: usize,
    n_heads: usize,
    agent_mlp_dim: usize,
    road_mlp_dim: usize,
    completion_mlp_dim: usize,
    traj_mlp_dim: usize,
    behavior_mlp_dim: usize,
    lr: f64,
    batch: usize,
    epochs: usize,
    lr_decay_start: usize,
    lr_decay_period: usize,
    weight_decay: f64,
    grad_clip: f64,
    smooth_l1_beta: f64,
    miss_threshold: f64,
    metric_agent_sum: bool,
    seed: u64,
    dt: f64,
    interaction_dist: f64,
    background_agents: usize,
    grid_extent_x: f64,
    grid_extent_y: f64,
    grid_cell: f64,
    anchor_hidden: usize,
    anchor_epochs: usize,
    anchor_lr: f64,
    loss_sum_steps: bool,
    hfif_traj_loss: bool,
    use_anchor_scores: bool,
    hfif_fusion: bool,
    lfbf_fusion: bool,
}

impl RunConfig {
    /// Parse `key = value` lines; `#` starts a comment, blank lines are
    /// skipped, later assignments win.
    pub fn parse(text: &str) -> Result<RunConfig, ConfigError> {
        let mut cfg = RunConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or(ConfigError::MissingEquals { line: line_no })?;
            cfg.set(key.trim(), value.trim(), line_no)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<RunConfig, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io(e.to_string()))?;
        RunConfig::parse(&text)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let positive = [
            ("d_model", self.d_model),
            ("n_enc", self.n_enc),
            ("n_hfif", self.n_hfif),
            ("n_lfbf", self.n_lfbf),
            ("k_neighbors", self.k_neighbors),
            ("s_intentions", self.s_intentions),
            ("k_modalities", self.k_modalities),
            ("l_roads", self.l_roads),
            ("t_future", self.t_future),
            ("t_history", self.t_history),
            ("n_heads", self.n_heads),
            ("batch", self.batch),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(ConfigError::Invalid(format!("{name} must be positive")));
            }
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return Err(ConfigError::Invalid(format!(
                "d_model {} must be divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.lr <= 0.0 {
            return Err(ConfigError::Invalid("lr must be > 0".into()));
        }
        if self.smooth_l1_beta <= 0.0 {
            return Err(ConfigError::Invalid("smooth_l1_beta must be > 0".into()));
        }
        if self.miss_threshold <= 0.0 {
            return Err(ConfigError::Invalid("miss_threshold must be > 0".into()));
        }
        if self.grid_cell <= 0.0 || self.grid_extent_x <= 0.0 || self.grid_extent_y <= 0.0 {
            return Err(ConfigError::Invalid("grid extents and cell size must be > 0".into()));
        }
        let cells = self.grid_cells();
        if cells < self.s_intentions {
            return Err(ConfigError::Invalid(format!(
                "anchor grid has {cells} cells, fewer than s_intentions {}",
                self.s_intentions
            )));
        }
        Ok(())
    }

    pub fn grid_cols(&self) -> usize {
        (2.0 * self.grid_extent_x / self.grid_cell).round() as usize
    }

    pub fn grid_rows(&self) -> usize {
        (2.0 * self.grid_extent_y / self.grid_cell).round() as usize
    }

    pub fn grid_cells(&self) -> usize {
        self.grid_cols() * self.grid_rows()
    }

    /// Learning rate at a 0-based epoch: halves every `lr_decay_period`
    /// epochs starting at `lr_decay_start`.
    pub fn lr_at_epoch(&self, epoch: usize) -> f64 {
        if epoch < self.lr_decay_start || self.lr_decay_period == 0 {
            self.lr
        } else {
            let halvings = (epoch - self.lr_decay_start) / self.lr_decay_period + 1;
            self.lr * 0.5f64.powi(halvings as i32)
        }
    }

    /// The 15-epoch ablation schedule: halving from epoch 10.
    pub fn ablation_schedule(mut self) -> Self {
        self.epochs = 15;
        self.lr_decay_start = 10;
        self
    }

    /// Minimal dimensions for gradient checks and structure probes.
    pub fn toy() -> RunConfig {
        RunConfig {
            d_model: 8,
            n_enc: 1,
            n_hfif: 1,
            n_lfbf: 1,
            k_neighbors: 4,
            s_intentions: 4,
            k_modalities: 2,
            l_roads: 8,
            t_future: 5,
            t_history: 5,
            n_heads: 2,
            agent_mlp_dim: 8,
            road_mlp_dim: 8,
            completion_mlp_dim: 8,
            traj_mlp_dim: 8,
            behavior_mlp_dim: 8,
            batch: 4,
            epochs: 2,
            grid_extent_x: 60.0,
            grid_extent_y: 40.0,
            grid_cell: 20.0,
            anchor_hidden: 8,
            anchor_epochs: 2,
            ..RunConfig::default()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_canonical_form() {
        let cfg = RunConfig::default();
        let text = cfg.to_canonical_string();
        let parsed = RunConfig::parse(&text).unwrap();
        assert_eq!(cfg, parsed);
        assert_eq!(parsed.to_canonical_string(), text);
    }

    #[test]
    fn parse_overrides_comments_and_spacing() {
        let text = "# toy setup\n d_model = 32 \nn_enc=2 # small\n\nlr = 0.001\nhfif_fusion = false\n";
        let cfg = RunConfig::parse(text).unwrap();
        assert_eq!(cfg.d_model, 32);
        assert_eq!(cfg.n_enc, 2);
        assert_eq!(cfg.lr, 0.001);
        assert!(!cfg.hfif_fusion);
        assert_eq!(cfg.n_lfbf, 3, "untouched keys keep defaults");
    }

    #[test]
    fn unknown_key_is_rejected_with_line() {
        let err = RunConfig::parse("d_model = 32\nd_modell = 64\n").unwrap_err();
        assert_eq!(err, ConfigError::UnknownKey { key: "d_modell".into(), line: 2 });
    }

    #[test]
    fn bad_value_and_missing_equals_are_rejected() {
        assert!(matches!(RunConfig::parse("d_model = soup"), Err(ConfigError::BadValue { .. })));
        assert!(matches!(RunConfig::parse("just a line"), Err(ConfigError::MissingEquals { line: 1 })));
    }

    #[test]
    fn head_divisibility_is_validated() {
        assert!(matches!(RunConfig::parse("d_model = 30\nn_heads = 8"), Err(ConfigError::Invalid(_))));
    }

    #[test]
    fn lr_schedule_matches_paper_arithmetic() {
        let cfg = RunConfig::default();
        assert_eq!(cfg.lr_at_epoch(0), 1e-4);
        assert_eq!(cfg.lr_at_epoch(19), 1e-4);
        assert_eq!(cfg.lr_at_epoch(20), 0.5e-4);
        assert_eq!(cfg.lr_at_epoch(21), 0.5e-4);
        assert_eq!(cfg.lr_at_epoch(22), 0.25e-4);
        let ab = cfg.ablation_schedule();
        assert_eq!(ab.lr_at_epoch(9), 1e-4);
        assert_eq!(ab.lr_at_epoch(10), 0.5e-4);
        assert_eq!(ab.lr_at_epoch(12), 0.25e-4);
    }

    #[test]
    fn grid_covers_requested_intentions() {
        let cfg = RunConfig::default();
        assert_eq!(cfg.grid_cols(), 60);
        assert_eq!(cfg.grid_rows(), 40);
        assert!(cfg.grid_cells() >= cfg.s_intentions);
    }
}
