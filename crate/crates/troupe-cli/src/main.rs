use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use std::path::PathBuf;
use std::sync::Arc;
use troupe::bench::{self, BenchmarkConfig, ReportFormat};
use troupe::config::FileConfig;
use troupe::engine::{DispatchMode, DurabilityConfig, Engine, EngineConfig};
use troupe::smartmart::{self, SmartMartOptions};
use troupe::{addr, oracle};

#[derive(Parser)]
#[command(
    name = "troupe",
    about = "Embedded multi-core in-memory actor database: loader, benchmark driver, admin, recovery"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a store from a config file and print the load summary.
    Load {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run the SmartMart benchmark and emit a report.
    Bench {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        mode: Option<String>,
        #[arg(long)]
        workers: Option<usize>,
        #[arg(long)]
        sections: Option<usize>,
        #[arg(long = "items-per-section")]
        items_per_section: Option<usize>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long = "epoch-seconds")]
        epoch_seconds: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value = "csv")]
        format: String,
        /// The paper's workload scale: 10,000 items/section, 300 history
        /// rows/item, k=150, 20 x 2 s epochs.
        #[arg(long = "paper-scale")]
        paper_scale: bool,
    },
    /// Parse and apply an admin script (lifecycle + access control).
    Admin {
        #[arg(long)]
        script: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Statically verify the application call graph against the
        /// resulting rule set.
        #[arg(long)]
        check: bool,
    },
    /// Replay a redo log into a cold store built from the config catalog.
    Recover {
        #[arg(long)]
        log: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Run the oracle suites (discount formula, checkout equivalence,
    /// serializability, conservation). Exit code 2 on failure.
    Verify {
        /// Smaller case counts for a fast signal.
        #[arg(long)]
        quick: bool,
    },
    /// Run a short workload and print per-actor monitoring statistics.
    Stats {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 25)]
        interactions: usize,
    },
    /// Print the tail of the audit trail after applying a script and
    /// running a short workload.
    Audit {
        #[arg(long, default_value_t = 20)]
        tail: usize,
        #[arg(long)]
        script: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

fn bench_config(path: Option<&PathBuf>) -> Result<BenchmarkConfig> {
    match path {
        Some(p) => Ok(FileConfig::load(p)?.benchmark_config()?),
        None => Ok(BenchmarkConfig::default()),
    }
}

/// Catalog-only engine for recovery: types registered and actors created,
/// no data loaded.
fn catalog_engine(cfg: &BenchmarkConfig, log: PathBuf) -> Result<Arc<Engine>> {
    let engine_cfg = EngineConfig {
        mode: DispatchMode::Sync,
        durability: DurabilityConfig {
            enabled: true,
            path: Some(log),
            policy: troupe::durability::FlushPolicy::PerCommit,
        },
        ..Default::default()
    };
    let engine = Engine::new(engine_cfg)?;
    smartmart::register_types(
        &engine,
        &SmartMartOptions::with_params(cfg.discount_params()),
    )?;
    let store = cfg.store_config();
    let names = store.section_names();
    let refs: Vec<&str> = names.iter().map(|s| s.as_str()).collect();
    engine.create_actors(smartmart::STORE_SECTION, &refs)?;
    let names: Vec<String> = (1..=store.group_managers).map(|i| i.to_string()).collect();
    let refs: Vec<&str> = names.iter().map(|s| s.as_str()).collect();
    engine.create_actors(smartmart::GROUP_MANAGER, &refs)?;
    let names: Vec<String> = (1..=store.customers()).map(|i| i.to_string()).collect();
    let refs: Vec<&str> = names.iter().map(|s| s.as_str()).collect();
    engine.create_actors(smartmart::CUSTOMER, &refs)?;
    let names: Vec<String> = (1..=store.carts).map(|i| i.to_string()).collect();
    let refs: Vec<&str> = names.iter().map(|s| s.as_str()).collect();
    engine.create_actors(smartmart::CART, &refs)?;
    Ok(engine)
}

fn run_demo_interactions(engine: &Arc<Engine>, cfg: &BenchmarkConfig, n: usize) -> Result<()> {
    bench::run_fixed_interactions(engine, cfg, n)?;
    engine.drain_detached();
    Ok(())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Load { config } => {
            let cfg = bench_config(Some(&config))?;
            let (engine, summary) = bench::build_loaded_engine(&cfg)?;
            let file = FileConfig::load(&config)?;
            let mut csv_rows = 0;
            if let Some(dir) = &file.store.csv_dir {
                csv_rows = troupe::relstore::load_csv_dir(&engine, dir)?;
            }
            println!(
                "loaded: {} sections, {} inventory rows, {} history rows, {} customers, {} carts, {} group managers, {} discount rows",
                summary.sections,
                summary.inventory_rows,
                summary.history_rows,
                summary.customers,
                summary.carts,
                summary.group_managers,
                summary.discount_rows
            );
            if csv_rows > 0 {
                println!("csv override: {csv_rows} rows");
            }
        }
        Command::Bench {
            config,
            mode,
            workers,
            sections,
            items_per_section,
            epochs,
            epoch_seconds,
            seed,
            out,
            format,
            paper_scale,
        } => {
            let mut cfg = bench_config(config.as_ref())?;
            if paper_scale {
                cfg = cfg.paper_scale();
            }
            if let Some(m) = mode {
                cfg.mode = m.parse::<DispatchMode>()?;
            }
            if let Some(w) = workers {
                cfg.workers = w;
                cfg.carts = cfg.carts.max(w);
            }
            if let Some(s) = sections {
                cfg.sections_total = s;
                cfg.sections_per_order = cfg.sections_per_order.min(s);
            }
            if let Some(i) = items_per_section {
                cfg.items_per_section_order = i;
            }
            if let Some(e) = epochs {
                cfg.epochs = e;
            }
            if let Some(s) = epoch_seconds {
                cfg.epoch_seconds = s;
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let report = bench::run_benchmark(&cfg)?;
            let format: ReportFormat = format.parse()?;
            match &out {
                Some(path) => {
                    bench::emit_report(&report, format, path)?;
                    println!("report written to {}", path.display());
                }
                None => match format {
                    ReportFormat::Csv => print!("{}", bench::report_csv(&report)),
                    ReportFormat::Json => println!("{}", bench::report_json(&report)),
                },
            }
            println!(
                "throughput {:.1}/s (stddev {:.1}), latency {:.1} us (stddev {:.1}), abort rate {:.2}%",
                report.throughput_mean,
                report.throughput_stddev,
                report.latency_mean_us,
                report.latency_stddev_us,
                report.abort_rate * 100.0
            );
        }
        Command::Admin {
            script,
            config,
            check,
        } => {
            let text = std::fs::read_to_string(&script)
                .with_context(|| format!("reading {}", script.display()))?;
            let cfg = bench_config(config.as_ref())?;
            let (engine, _) = bench::build_loaded_engine(&cfg)?;
            let commands = engine.apply_admin_script(&text)?;
            println!("applied {} commands", commands.len());
            let rules = engine.rule_set();
            println!(
                "rule set: deny-by-default={}, {} grants",
                rules.revoked,
                rules.grants.len()
            );
            for t in engine.catalog_types() {
                println!("  {t}: {} live actors", engine.list_actor_names(&t)?.len());
            }
            if check {
                let violations =
                    troupe::security::verify_call_graph(&rules, smartmart::CALL_GRAPH);
                if violations.is_empty() {
                    println!("call graph verified: every declared call is granted");
                } else {
                    for v in &violations {
                        println!("violation: {v}");
                    }
                    bail!("{} call-graph violations", violations.len());
                }
            }
        }
        Command::Recover { log, config } => {
            let cfg = bench_config(config.as_ref())?;
            let engine = catalog_engine(&cfg, log)?;
            let report = engine.recover()?;
            println!(
                "recovered: {} transactions replayed, {} tail bytes truncated, {} detached specs restored",
                report.tids_replayed, report.truncated_tail_bytes, report.detached_specs_restored
            );
            let executed = engine.process_detached_queue();
            if executed > 0 {
                println!("executed {executed} restored detached transactions");
            }
            for t in engine.catalog_types() {
                let mut rows = 0usize;
                for name in engine.list_actor_names(&t)? {
                    let a = addr(&t, &name);
                    for rel in [
                        "inventory",
                        "purchase_history",
                        "store_visits",
                        "customer_info",
                        "discounts",
                        "cart_info",
                        "cart_purchases",
                        "passwd",
                    ] {
                        if let Ok(snap) = engine.relation_snapshot(&a, rel) {
                            rows += snap.len();
                        }
                    }
                }
                println!("  {t}: {rows} rows");
            }
        }
        Command::Verify { quick } => {
            let (eq1_cases, stores, schedules, workers, per_worker) = if quick {
                (200, 20, 60, 2, 20)
            } else {
                (1000, 100, 300, 4, 60)
            };
            let mut failed = false;
            match oracle::eq1_equivalence_check(eq1_cases, 7) {
                Ok(()) => println!("PASS discount formula oracle ({eq1_cases} cases)"),
                Err(e) => {
                    failed = true;
                    println!("FAIL discount formula oracle: {e}");
                }
            }
            match oracle::checkout_equivalence_check(stores, 11) {
                Ok(()) => println!("PASS checkout oracle equivalence ({stores} stores)"),
                Err(e) => {
                    failed = true;
                    println!("FAIL checkout oracle equivalence: {e}");
                }
            }
            match oracle::serializability_check(schedules, 13) {
                Ok(()) => {
                    println!("PASS serializability small-instance check ({schedules} schedules)")
                }
                Err(e) => {
                    failed = true;
                    println!("FAIL serializability: {e}");
                }
            }
            match oracle::conservation_check(workers, per_worker, 17) {
                Ok(committed) => {
                    println!("PASS conservation audit ({committed} committed interactions)")
                }
                Err(e) => {
                    failed = true;
                    println!("FAIL conservation audit: {e}");
                }
            }
            if failed {
                std::process::exit(2);
            }
        }
        Command::Stats {
            config,
            interactions,
        } => {
            let mut cfg = bench_config(config.as_ref())?;
            cfg.inventory_items_per_section = cfg.inventory_items_per_section.min(100);
            cfg.history_rows_per_item = cfg.history_rows_per_item.min(10);
            let (engine, _) = bench::build_loaded_engine(&cfg)?;
            run_demo_interactions(&engine, &cfg, interactions)?;
            let stats = engine.stats_snapshot();
            let mut keys: Vec<_> = stats.keys().cloned().collect();
            keys.sort();
            let mut out = serde_json::Map::new();
            for k in keys {
                out.insert(
                    k.to_string(),
                    serde_json::to_value(&stats[&k]).expect("stats serialize"),
                );
            }
            println!("{}", serde_json::to_string_pretty(&out)?);
        }
        Command::Audit {
            tail,
            script,
            config,
        } => {
            let mut cfg = bench_config(config.as_ref())?;
            cfg.inventory_items_per_section = cfg.inventory_items_per_section.min(100);
            cfg.history_rows_per_item = cfg.history_rows_per_item.min(10);
            let (engine, _) = bench::build_loaded_engine(&cfg)?;
            if let Some(path) = &script {
                let text = std::fs::read_to_string(path)
                    .with_context(|| format!("reading {}", path.display()))?;
                engine.apply_admin_script(&text)?;
            }
            run_demo_interactions(&engine, &cfg, 5)?;
            for rec in engine.audit_tail(tail) {
                println!("{}", serde_json::to_string(&rec)?);
            }
        }
    }
    Ok(())
}
