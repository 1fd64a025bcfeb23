//! TOML configuration file mapping onto the benchmark/engine settings.
//! Every section and key is optional; defaults are the desk-scale
//! configuration. CLI flags override file values.

use crate::bench::BenchmarkConfig;
use crate::engine::DispatchMode;
use crate::error::{EngineError, Result};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Default, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    #[serde(default)]
    pub store: StoreSection,
    #[serde(default)]
    pub discount: DiscountSection,
    #[serde(default)]
    pub engine: EngineSection,
    #[serde(default)]
    pub durability: DurabilitySection,
    #[serde(default)]
    pub bench: BenchSection,
}

#[derive(Debug, Clone, Default, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StoreSection {
    pub sections: Option<usize>,
    pub items_per_section: Option<usize>,
    pub history_rows_per_item: Option<usize>,
    pub carts: Option<usize>,
    pub group_managers: Option<usize>,
    pub customers_per_cart: Option<usize>,
    pub initial_quantity: Option<i64>,
    pub store_id: Option<i64>,
    pub seed: Option<u64>,
    /// Optional CSV directory overriding synthetic data.
    pub csv_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiscountSection {
    pub c: Option<f64>,
    pub k: Option<usize>,
    pub replenish_quantity: Option<i64>,
    pub replenish_enabled: Option<bool>,
}

#[derive(Debug, Clone, Default, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EngineSection {
    pub mode: Option<String>,
    pub section_pool_threads: Option<usize>,
    /// Advisory processor hints for the section pool.
    pub affinity: Option<Vec<usize>>,
    pub audit_external: Option<bool>,
}

#[derive(Debug, Clone, Default, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DurabilitySection {
    pub enabled: Option<bool>,
    pub path: Option<PathBuf>,
    /// "per-commit" or group interval in milliseconds.
    pub group_ms: Option<u64>,
}

#[derive(Debug, Clone, Default, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchSection {
    pub workers: Option<usize>,
    pub sections_per_order: Option<usize>,
    pub items_per_section_order: Option<usize>,
    pub epochs: Option<usize>,
    pub epoch_seconds: Option<f64>,
    pub quantity_max: Option<i64>,
    pub warmup: Option<bool>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<FileConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| EngineError::Config(format!("cannot read {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| EngineError::Config(format!("{e}")))
    }

    /// Merge the file over desk-scale defaults.
    pub fn benchmark_config(&self) -> Result<BenchmarkConfig> {
        let mut cfg = BenchmarkConfig::default();
        let s = &self.store;
        if let Some(v) = s.sections {
            cfg.sections_total = v;
            cfg.sections_per_order = cfg.sections_per_order.min(v);
        }
        if let Some(v) = s.items_per_section {
            cfg.inventory_items_per_section = v;
        }
        if let Some(v) = s.history_rows_per_item {
            cfg.history_rows_per_item = v;
        }
        if let Some(v) = s.carts {
            cfg.carts = v;
        }
        if let Some(v) = s.group_managers {
            cfg.group_managers = v;
        }
        if let Some(v) = s.customers_per_cart {
            cfg.customers_per_cart = v;
        }
        if let Some(v) = s.initial_quantity {
            cfg.initial_quantity = v;
        }
        if let Some(v) = s.store_id {
            cfg.store_id = v;
        }
        if let Some(v) = s.seed {
            cfg.seed = v;
        }
        let d = &self.discount;
        if let Some(v) = d.c {
            cfg.c = v;
        }
        if let Some(v) = d.k {
            cfg.k = v;
        }
        if let Some(v) = d.replenish_quantity {
            cfg.replenish_quantity = v;
        }
        if let Some(v) = d.replenish_enabled {
            cfg.replenish_enabled = v;
        }
        let e = &self.engine;
        if let Some(m) = &e.mode {
            cfg.mode = m.parse()?;
        }
        if let Some(v) = e.section_pool_threads {
            cfg.section_pool_threads = Some(v);
        }
        let du = &self.durability;
        if let Some(true) = du.enabled {
            cfg.durability = true;
            cfg.log_path = du.path.clone();
        }
        let b = &self.bench;
        if let Some(v) = b.workers {
            cfg.workers = v;
            cfg.carts = cfg.carts.max(v);
        }
        if let Some(v) = b.sections_per_order {
            cfg.sections_per_order = v;
        }
        if let Some(v) = b.items_per_section_order {
            cfg.items_per_section_order = v;
        }
        if let Some(v) = b.epochs {
            cfg.epochs = v;
        }
        if let Some(v) = b.epoch_seconds {
            cfg.epoch_seconds = v;
        }
        if let Some(v) = b.quantity_max {
            cfg.quantity_max = v;
        }
        if let Some(v) = b.warmup {
            cfg.warmup = v;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn mode(&self) -> Result<Option<DispatchMode>> {
        match &self.engine.mode {
            Some(m) => Ok(Some(m.parse()?)),
            None => Ok(None),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_apply_when_sections_missing() {
        let cfg: FileConfig = toml::from_str("").unwrap();
        let bench = cfg.benchmark_config().unwrap();
        assert_eq!(bench.sections_total, 8);
        assert_eq!(bench.k, 15);
    }

    #[test]
    fn file_values_override_defaults() {
        let text = r#"
[store]
sections = 4
items_per_section = 100

[discount]
k = 5
c = 2.0

[engine]
mode = "async"

[bench]
workers = 2
sections_per_order = 3
epochs = 2
epoch_seconds = 0.5
"#;
        let cfg: FileConfig = toml::from_str(text).unwrap();
        let bench = cfg.benchmark_config().unwrap();
        assert_eq!(bench.sections_total, 4);
        assert_eq!(bench.sections_per_order, 3);
        assert_eq!(bench.k, 5);
        assert_eq!(bench.mode, DispatchMode::Async);
        assert_eq!(bench.workers, 2);
        assert_eq!(bench.carts, 2);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = toml::from_str::<FileConfig>("[store]\nnope = 1\n");
        assert!(err.is_err());
    }
}
