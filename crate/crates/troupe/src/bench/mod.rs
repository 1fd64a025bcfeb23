//! Workload driver: closed-loop workers running add_items + checkout
//! interactions against a loaded SmartMart store, epoch-based
//! throughput/latency measurement, and report emission.

use crate::addr::ActorAddress;
use crate::engine::{
    AssignRule, DispatchMode, DurabilityConfig, Engine, EngineConfig, PoolSpec,
};
use crate::error::{AbortReason, CommitResult, EngineError, Result};
use crate::smartmart::{self, DiscountParams, LoadSummary, SmartMartOptions, StoreConfig};
use crate::txn::TxnOptions;
use crate::value::Value;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

pub const SECTION_POOL: &str = "sections";

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct BenchmarkConfig {
    pub sections_total: usize,
    pub sections_per_order: usize,
    pub items_per_section_order: usize,
    pub inventory_items_per_section: usize,
    pub history_rows_per_item: usize,
    pub carts: usize,
    pub workers: usize,
    pub group_managers: usize,
    pub customers_per_cart: usize,
    pub k: usize,
    pub c: f64,
    pub replenish_quantity: i64,
    pub replenish_enabled: bool,
    pub initial_quantity: i64,
    pub quantity_max: i64,
    pub epochs: usize,
    pub epoch_seconds: f64,
    pub warmup: bool,
    pub mode: DispatchMode,
    pub seed: u64,
    pub durability: bool,
    pub log_path: Option<PathBuf>,
    pub section_pool_threads: Option<usize>,
    pub store_id: i64,
}

impl Default for BenchmarkConfig {
    /// Desk-scale defaults: 8 sections x 500 items, 30 history rows per
    /// item, k = 15, 5 epochs of 1 s.
    fn default() -> Self {
        BenchmarkConfig {
            sections_total: 8,
            sections_per_order: 8,
            items_per_section_order: 4,
            inventory_items_per_section: 500,
            history_rows_per_item: 30,
            carts: 1,
            workers: 1,
            group_managers: 10,
            customers_per_cart: 30,
            k: 15,
            c: 1.0,
            replenish_quantity: 10_000,
            replenish_enabled: true,
            initial_quantity: 100_000,
            quantity_max: 5,
            epochs: 5,
            epoch_seconds: 1.0,
            warmup: true,
            mode: DispatchMode::Sync,
            seed: 42,
            durability: false,
            log_path: None,
            section_pool_threads: None,
            store_id: 1,
        }
    }
}

impl BenchmarkConfig {
    /// The paper's workload scale: 10,000 items and 300 history rows per
    /// item per section (3,000,000 entries over 8 sections), k = 150,
    /// 20 epochs of 2 s.
    pub fn paper_scale(mut self) -> Self {
        self.inventory_items_per_section = 10_000;
        self.history_rows_per_item = 300;
        self.k = 150;
        self.epochs = 20;
        self.epoch_seconds = 2.0;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.carts == 0 {
            return Err(EngineError::Config("carts must be >= 1".into()));
        }
        if self.workers == 0 || self.workers > self.carts {
            return Err(EngineError::Config(
                "workers must be in 1..=carts".into(),
            ));
        }
        if self.sections_per_order == 0 || self.sections_per_order > self.sections_total {
            return Err(EngineError::Config(
                "sections_per_order must be in 1..=sections_total".into(),
            ));
        }
        if self.items_per_section_order == 0
            || self.items_per_section_order > self.inventory_items_per_section
        {
            return Err(EngineError::Config(
                "items_per_section_order must be in 1..=inventory_items_per_section".into(),
            ));
        }
        if self.epochs == 0 || self.epoch_seconds <= 0.0 {
            return Err(EngineError::Config(
                "epochs and epoch_seconds must be positive".into(),
            ));
        }
        if self.quantity_max < 1 {
            return Err(EngineError::Config("quantity_max must be >= 1".into()));
        }
        if self.k == 0 {
            return Err(EngineError::Config("k must be >= 1".into()));
        }
        if self.durability && self.log_path.is_none() {
            return Err(EngineError::Config(
                "durability requires a log path".into(),
            ));
        }
        Ok(())
    }

    pub fn store_config(&self) -> StoreConfig {
        StoreConfig {
            sections: self.sections_total,
            items_per_section: self.inventory_items_per_section,
            history_rows_per_item: self.history_rows_per_item,
            carts: self.carts,
            group_managers: self.group_managers,
            customers_per_cart: self.customers_per_cart,
            initial_quantity: self.initial_quantity,
            store_id: self.store_id,
            seed: self.seed,
        }
    }

    pub fn discount_params(&self) -> DiscountParams {
        DiscountParams {
            c: self.c,
            k: self.k,
            replenish_quantity: self.replenish_quantity,
            replenish_enabled: self.replenish_enabled,
        }
    }

    pub fn section_pool_width(&self) -> usize {
        self.section_pool_threads.unwrap_or_else(|| {
            let cores = std::thread::available_parallelism()
                .map(|n| n.get())
                .unwrap_or(1);
            self.sections_total.min(cores.max(2))
        })
    }

    /// Store sections run on their own pool in async mode; everything
    /// else executes inline in its caller's stream, mirroring the
    /// measured deployment.
    pub fn engine_config(&self) -> EngineConfig {
        let mut cfg = EngineConfig {
            mode: self.mode,
            audit_external: false,
            ..EngineConfig::default()
        };
        if self.mode == DispatchMode::Async {
            cfg.pools.push(PoolSpec {
                name: SECTION_POOL.into(),
                threads: self.section_pool_width(),
                affinity: Vec::new(),
            });
            cfg.assignment.push(AssignRule {
                pattern: smartmart::STORE_SECTION.into(),
                pool: SECTION_POOL.into(),
            });
        }
        if self.durability {
            cfg.durability = DurabilityConfig {
                enabled: true,
                path: self.log_path.clone(),
                policy: crate::durability::FlushPolicy::PerCommit,
            };
        }
        cfg
    }
}

/// Register SmartMart types on a fresh engine per this config.
pub fn build_engine(cfg: &BenchmarkConfig) -> Result<Arc<Engine>> {
    cfg.validate()?;
    let engine = Engine::new(cfg.engine_config())?;
    smartmart::register_types(
        &engine,
        &SmartMartOptions::with_params(cfg.discount_params()),
    )?;
    Ok(engine)
}

/// Fresh engine with the synthetic store loaded.
pub fn build_loaded_engine(cfg: &BenchmarkConfig) -> Result<(Arc<Engine>, LoadSummary)> {
    let engine = build_engine(cfg)?;
    let summary = smartmart::load_store(&engine, &cfg.store_config())?;
    Ok((engine, summary))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InteractionResult {
    Committed,
    Aborted(AbortReason),
}

#[derive(Debug, Clone, Copy)]
pub struct InteractionOutcome {
    pub epoch: usize,
    pub latency_us: u64,
    pub result: InteractionResult,
}

/// One interaction: add_items, and on its successful commit, checkout.
fn run_interaction(
    engine: &Arc<Engine>,
    cart: &ActorAddress,
    rng: &mut ChaCha8Rng,
    cfg: &BenchmarkConfig,
) -> std::result::Result<InteractionResult, EngineError> {
    let customer = rng.gen_range(1..=(cfg.customers_per_cart * cfg.carts) as i64);
    let store = cfg.store_config();
    let section_idx =
        rand::seq::index::sample(rng, cfg.sections_total, cfg.sections_per_order).into_vec();
    let mut orders = Vec::with_capacity(cfg.sections_per_order * cfg.items_per_section_order);
    for s in section_idx {
        let name = store.section_name(s);
        let range = store.section_items(s);
        let picks = rand::seq::index::sample(
            rng,
            cfg.inventory_items_per_section,
            cfg.items_per_section_order,
        );
        for p in picks.iter() {
            orders.push(Value::Tuple(vec![
                Value::Str(name.clone()),
                Value::Int(range.start + p as i64),
                Value::Int(rng.gen_range(1..=cfg.quantity_max)),
            ]));
        }
    }

    let txn = engine.begin_root(TxnOptions::default())?;
    let fut = txn.invoke(cart, "add_items", vec![Value::List(orders), Value::Int(customer)])?;
    let session = match txn.get(&fut) {
        Ok(v) => {
            let session = v.as_int().unwrap_or(0);
            match txn.commit() {
                CommitResult::Committed(_) => session,
                CommitResult::Aborted(r) => return Ok(InteractionResult::Aborted(r)),
            }
        }
        Err(e) => {
            let class = e.abort_class();
            txn.abort();
            return Ok(InteractionResult::Aborted(class));
        }
    };

    let txn = engine.begin_root(TxnOptions::default())?;
    let fut = txn.invoke(cart, "checkout", vec![Value::Int(session)])?;
    match txn.get(&fut) {
        Ok(_) => match txn.commit() {
            CommitResult::Committed(_) => Ok(InteractionResult::Committed),
            CommitResult::Aborted(r) => Ok(InteractionResult::Aborted(r)),
        },
        Err(e) => {
            let class = e.abort_class();
            txn.abort();
            Ok(InteractionResult::Aborted(class))
        }
    }
}

fn worker_rng(cfg: &BenchmarkConfig, worker: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(worker as u64 * 7919))
}

fn cart_for(worker: usize) -> ActorAddress {
    crate::addr::addr(smartmart::CART, &(worker + 1).to_string())
}

/// Exactly `per_worker` interactions per worker against a loaded engine;
/// outcomes in per-worker order. Used by verification harnesses.
pub fn run_fixed_interactions(
    engine: &Arc<Engine>,
    cfg: &BenchmarkConfig,
    per_worker: usize,
) -> Result<Vec<InteractionOutcome>> {
    let outcomes = std::thread::scope(|scope| -> Result<Vec<InteractionOutcome>> {
        let mut handles = Vec::new();
        for w in 0..cfg.workers {
            let engine = engine.clone();
            let cfg = cfg.clone();
            handles.push(scope.spawn(move || -> Result<Vec<InteractionOutcome>> {
                let mut rng = worker_rng(&cfg, w);
                let cart = cart_for(w);
                let mut out = Vec::with_capacity(per_worker);
                for _ in 0..per_worker {
                    let started = Instant::now();
                    let result = run_interaction(&engine, &cart, &mut rng, &cfg)?;
                    out.push(InteractionOutcome {
                        epoch: 0,
                        latency_us: started.elapsed().as_micros() as u64,
                        result,
                    });
                }
                Ok(out)
            }));
        }
        let mut all = Vec::new();
        for h in handles {
            all.extend(h.join().expect("worker panicked")?);
        }
        Ok(all)
    })?;
    Ok(outcomes)
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub committed: u64,
    pub aborted_read: u64,
    pub aborted_scan: u64,
    pub aborted_racy: u64,
    pub aborted_app: u64,
    pub aborted_denied: u64,
    pub mean_latency_us: f64,
    pub throughput_per_s: f64,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Report {
    pub config: BenchmarkConfig,
    pub epochs: Vec<EpochStats>,
    pub throughput_mean: f64,
    pub throughput_stddev: f64,
    pub latency_mean_us: f64,
    pub latency_stddev_us: f64,
    pub abort_rate: f64,
}

fn mean_stddev(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let mean = xs.iter().sum::<f64>() / xs.len() as f64;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (xs.len() as f64 - 1.0);
    (mean, var.sqrt())
}

fn aggregate(cfg: &BenchmarkConfig, outcomes: &[InteractionOutcome]) -> Report {
    let mut epochs = Vec::with_capacity(cfg.epochs);
    for e in 0..cfg.epochs {
        let mut stats = EpochStats {
            epoch: e,
            committed: 0,
            aborted_read: 0,
            aborted_scan: 0,
            aborted_racy: 0,
            aborted_app: 0,
            aborted_denied: 0,
            mean_latency_us: 0.0,
            throughput_per_s: 0.0,
        };
        let mut latency_sum = 0u64;
        for o in outcomes.iter().filter(|o| o.epoch == e) {
            match o.result {
                InteractionResult::Committed => {
                    stats.committed += 1;
                    latency_sum += o.latency_us;
                }
                InteractionResult::Aborted(r) => match r {
                    AbortReason::ReadValidation => stats.aborted_read += 1,
                    AbortReason::ScanValidation => stats.aborted_scan += 1,
                    AbortReason::RacySiblings => stats.aborted_racy += 1,
                    AbortReason::ApplicationError => stats.aborted_app += 1,
                    AbortReason::AccessDenied => stats.aborted_denied += 1,
                },
            }
        }
        if stats.committed > 0 {
            stats.mean_latency_us = latency_sum as f64 / stats.committed as f64;
        }
        stats.throughput_per_s = stats.committed as f64 / cfg.epoch_seconds;
        epochs.push(stats);
    }
    let (throughput_mean, throughput_stddev) =
        mean_stddev(&epochs.iter().map(|e| e.throughput_per_s).collect::<Vec<_>>());
    let (latency_mean_us, latency_stddev_us) =
        mean_stddev(&epochs.iter().map(|e| e.mean_latency_us).collect::<Vec<_>>());
    let committed: u64 = epochs.iter().map(|e| e.committed).sum();
    let aborted: u64 = epochs
        .iter()
        .map(|e| e.aborted_read + e.aborted_scan + e.aborted_racy + e.aborted_app + e.aborted_denied)
        .sum();
    let abort_rate = if committed + aborted > 0 {
        aborted as f64 / (committed + aborted) as f64
    } else {
        0.0
    };
    Report {
        config: cfg.clone(),
        epochs,
        throughput_mean,
        throughput_stddev,
        latency_mean_us,
        latency_stddev_us,
        abort_rate,
    }
}

/// Load the store, spawn closed-loop workers, discard one warm-up epoch,
/// then measure `epochs` epochs and aggregate.
pub fn run_benchmark(cfg: &BenchmarkConfig) -> Result<Report> {
    cfg.validate()?;
    if cfg.mode == DispatchMode::Async {
        let cores = std::thread::available_parallelism()
            .map(|n| n.get())
            .unwrap_or(1);
        let wanted = cfg.workers + cfg.section_pool_width();
        if cores < wanted {
            eprintln!(
                "warning: {wanted} threads wanted (workers + section pool) but only {cores} cores available; async results will understate parallel benefit"
            );
        }
    }
    let (engine, _summary) = build_loaded_engine(cfg)?;
    let epoch_idx = Arc::new(AtomicUsize::new(usize::MAX));
    let stop = Arc::new(AtomicBool::new(false));

    let outcomes = std::thread::scope(|scope| -> Result<Vec<InteractionOutcome>> {
        let mut handles = Vec::new();
        for w in 0..cfg.workers {
            let engine = engine.clone();
            let cfg2 = cfg.clone();
            let epoch_idx = epoch_idx.clone();
            let stop = stop.clone();
            handles.push(scope.spawn(move || -> Result<Vec<InteractionOutcome>> {
                let mut rng = worker_rng(&cfg2, w);
                let cart = cart_for(w);
                let mut out = Vec::new();
                while !stop.load(Ordering::Relaxed) {
                    let started = Instant::now();
                    let result = run_interaction(&engine, &cart, &mut rng, &cfg2)?;
                    let epoch = epoch_idx.load(Ordering::Relaxed);
                    if epoch != usize::MAX {
                        out.push(InteractionOutcome {
                            epoch,
                            latency_us: started.elapsed().as_micros() as u64,
                            result,
                        });
                    }
                }
                Ok(out)
            }));
        }

        let epoch_len = Duration::from_secs_f64(cfg.epoch_seconds);
        if cfg.warmup {
            std::thread::sleep(epoch_len);
        }
        for e in 0..cfg.epochs {
            epoch_idx.store(e, Ordering::Relaxed);
            std::thread::sleep(epoch_len);
        }
        epoch_idx.store(usize::MAX, Ordering::Relaxed);
        stop.store(true, Ordering::Relaxed);

        let mut all = Vec::new();
        for h in handles {
            all.extend(h.join().expect("worker panicked")?);
        }
        Ok(all)
    })?;
    engine.drain_detached();
    Ok(aggregate(cfg, &outcomes))
}

/// Aggregate fixed-count outcomes as a single-epoch report (throughput is
/// not meaningful there; abort accounting and latency are).
pub fn aggregate_fixed(cfg: &BenchmarkConfig, outcomes: &[InteractionOutcome]) -> Report {
    let mut one_epoch = cfg.clone();
    one_epoch.epochs = 1;
    aggregate(&one_epoch, outcomes)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
}

impl std::str::FromStr for ReportFormat {
    type Err = EngineError;
    fn from_str(s: &str) -> Result<ReportFormat> {
        match s {
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            other => Err(EngineError::Config(format!("unknown format `{other}`"))),
        }
    }
}

/// CSV rows per epoch. AccessDenied aborts fold into `aborted_app`; the
/// JSON report keeps them separate.
pub fn report_csv(report: &Report) -> String {
    let mut out = String::from(
        "epoch,committed,aborted_read,aborted_scan,aborted_racy,aborted_app,mean_latency_us,throughput_per_s\n",
    );
    for e in &report.epochs {
        out.push_str(&format!(
            "{},{},{},{},{},{},{:.3},{:.3}\n",
            e.epoch,
            e.committed,
            e.aborted_read,
            e.aborted_scan,
            e.aborted_racy,
            e.aborted_app + e.aborted_denied,
            e.mean_latency_us,
            e.throughput_per_s
        ));
    }
    out
}

pub fn report_json(report: &Report) -> String {
    serde_json::to_string_pretty(report).expect("report serializes")
}

pub fn emit_report(report: &Report, format: ReportFormat, path: &Path) -> Result<()> {
    let body = match format {
        ReportFormat::Csv => report_csv(report),
        ReportFormat::Json => report_json(report),
    };
    let mut f = std::fs::File::create(path)?;
    f.write_all(body.as_bytes())?;
    Ok(())
}

/// Worker sweep at fixed order shape (Figures 4-5 analogue): one report
/// per worker count.
pub fn sweep_workers(base: &BenchmarkConfig, workers: &[usize]) -> Result<Vec<Report>> {
    let mut reports = Vec::with_capacity(workers.len());
    for &w in workers {
        let mut cfg = base.clone();
        cfg.workers = w;
        cfg.carts = cfg.carts.max(w);
        reports.push(run_benchmark(&cfg)?);
    }
    Ok(reports)
}

/// Section sweep at one worker (Figure 3 analogue): order size grows with
/// the number of sections per order.
pub fn sweep_sections(base: &BenchmarkConfig, sections: &[usize]) -> Result<Vec<Report>> {
    let mut reports = Vec::with_capacity(sections.len());
    for &s in sections {
        let mut cfg = base.clone();
        cfg.sections_per_order = s;
        reports.push(run_benchmark(&cfg)?);
    }
    Ok(reports)
}

/// Combined sweep CSV: one row per report keyed by the swept value.
pub fn sweep_csv(key: &str, values: &[usize], reports: &[Report]) -> String {
    let mut out = format!("{key},throughput_mean,throughput_stddev,latency_mean_us,latency_stddev_us,abort_rate\n");
    for (v, r) in values.iter().zip(reports) {
        out.push_str(&format!(
            "{},{:.3},{:.3},{:.3},{:.3},{:.5}\n",
            v, r.throughput_mean, r.throughput_stddev, r.latency_mean_us, r.latency_stddev_us, r.abort_rate
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_carts_is_a_config_error() {
        let cfg = BenchmarkConfig {
            carts: 0,
            ..Default::default()
        };
        assert!(matches!(cfg.validate(), Err(EngineError::Config(_))));
    }

    #[test]
    fn order_shape_eight_by_four_is_thirty_two() {
        let cfg = BenchmarkConfig::default();
        assert_eq!(cfg.sections_per_order * cfg.items_per_section_order, 32);
    }

    #[test]
    fn report_json_round_trips() {
        let cfg = BenchmarkConfig::default();
        let report = aggregate(
            &cfg,
            &[InteractionOutcome {
                epoch: 0,
                latency_us: 120,
                result: InteractionResult::Committed,
            }],
        );
        let json = report_json(&report);
        let back: Report = serde_json::from_str(&json).unwrap();
        assert_eq!(back, report);
    }

    #[test]
    fn csv_has_header_plus_epoch_rows() {
        let mut cfg = BenchmarkConfig::default();
        cfg.epochs = 20;
        let report = aggregate(&cfg, &[]);
        let csv = report_csv(&report);
        assert_eq!(csv.lines().count(), 21);
        assert!(csv.starts_with("epoch,committed,aborted_read"));
    }

    #[test]
    fn csv_is_byte_stable() {
        let cfg = BenchmarkConfig::default();
        let outcomes = vec![InteractionOutcome {
            epoch: 1,
            latency_us: 250,
            result: InteractionResult::Aborted(AbortReason::ScanValidation),
        }];
        let a = report_csv(&aggregate(&cfg, &outcomes));
        let b = report_csv(&aggregate(&cfg, &outcomes));
        assert_eq!(a, b);
    }
}
