//! Command-line front end over the `moeserve` library: synthetic model and
//! adapter generation, memory analytics, expert-map inspection, merged-model
//! equivalence verification, and the serving benchmark.
//!
//! Every subcommand is a thin orchestration of library calls; all results
//! are reproducible from the seeds on the command line.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;
use serde_json::json;

use moeserve::adapters::{
    load_adapter_dir, save_adapter_dir, AdapterManifest, AdapterRegistry, AdapterShape,
    generate_synthetic_adapter,
};
use moeserve::config::{
    ClockMode, Dtype, EngineConfig, ModelConfig, PageConfig, DEFAULT_PAGE_SIZE,
    DEFAULT_STEP_BASE_COST, DEFAULT_STEP_TOKEN_COST, DEFAULT_TOKEN_BUDGET,
};
use moeserve::memory::{
    dry_run_accounting, fragmentation_factor, min_feasible_e_max, reference_model_config,
    reference_profiles, sparsity_factor, AdapterProfile,
};
use moeserve::moe::{gen_base_model, load_model, load_model_config, save_model};
use moeserve::reroute::bench_reroute;
use moeserve::serving::{
    gen_workload, latency_stats, load_trace, save_trace, verify_equivalence, ServingEngine,
    VerifyOptions, WorkloadSpec,
};
use moeserve::{Error, Result};

#[derive(Parser)]
#[command(name = "moeserve", version, about = "Multi-adapter MoE serving toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Memory analytics over adapter expert profiles: sparsity, padded-layout
    /// fragmentation, and paged dry-run accounting.
    Analyze(AnalyzeArgs),
    /// Generate a deterministic synthetic base model checkpoint.
    GenModel(GenModelArgs),
    /// Generate synthetic expert-specialized adapters for a model.
    GenAdapters(GenAdaptersArgs),
    /// Print the per-layer expert maps of a loaded adapter set.
    DumpMap(DumpMapArgs),
    /// Verify the shared serving path against merged single-adapter models.
    Verify(VerifyArgs),
    /// Serve a synthetic workload and report latency and throughput.
    ServeBench(Box<ServeBenchArgs>),
}

fn main() {
    // Die quietly when a downstream pipe closes (e.g. `… --json | head`)
    // instead of panicking on the failed write.
    #[cfg(unix)]
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Analyze(args) => cmd_analyze(args),
        Command::GenModel(args) => cmd_gen_model(args),
        Command::GenAdapters(args) => cmd_gen_adapters(args),
        Command::DumpMap(args) => cmd_dump_map(args),
        Command::Verify(args) => cmd_verify(args),
        Command::ServeBench(args) => cmd_serve_bench(*args),
    };
    if let Err(e) = result {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code() as i32);
    }
}

// ---------------------------------------------------------------- analyze

#[derive(Args)]
struct AnalyzeArgs {
    /// Adapter directories (each with a manifest) to profile.
    adapters: Vec<PathBuf>,
    /// Use the built-in reference adapter set and model geometry.
    #[arg(long, conflicts_with_all = ["adapters", "profile"])]
    reference: bool,
    /// TOML file of adapter profiles ([[adapter]] with name + per_layer or
    /// max + avg).
    #[arg(long, conflicts_with = "adapters")]
    profile: Option<PathBuf>,
    /// Model checkpoint directory providing the geometry.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Page size in bytes for the dry-run accounting.
    #[arg(long)]
    page_size: Option<usize>,
    /// Per-adapter expert slot capacity; defaults to the smallest feasible.
    #[arg(long)]
    max_experts: Option<u32>,
    /// Emit JSONL records instead of a human-readable summary.
    #[arg(long)]
    json: bool,
}

#[derive(Deserialize)]
struct ProfileFile {
    #[serde(default)]
    adapter: Vec<ProfileEntry>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ProfileEntry {
    name: String,
    per_layer: Option<Vec<u32>>,
    max: Option<u32>,
    avg: Option<f64>,
}

fn read_toml<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    toml::from_str(&fs::read_to_string(path)?)
        .map_err(|e| Error::Input(format!("{}: {}", path.display(), e)))
}

fn gather_profiles(args: &AnalyzeArgs) -> Result<(Vec<AdapterProfile>, ModelConfig)> {
    if args.reference {
        let model = match &args.model {
            Some(dir) => load_model_config(dir)?,
            None => reference_model_config(),
        };
        return Ok((reference_profiles(), model));
    }
    let model = match &args.model {
        Some(dir) => load_model_config(dir)?,
        None => {
            return Err(Error::Usage(
                "provide --model DIR for the geometry, or --reference".into(),
            ))
        }
    };
    let profiles = if let Some(path) = &args.profile {
        let file: ProfileFile = read_toml(path)?;
        file.adapter
            .into_iter()
            .map(|e| match (e.per_layer, e.max, e.avg) {
                (Some(counts), None, None) => Ok(AdapterProfile::per_layer(&e.name, counts)),
                (None, Some(max), Some(avg)) => Ok(AdapterProfile::summary(&e.name, max, avg)),
                _ => Err(Error::Input(format!(
                    "adapter '{}' needs either per_layer or max + avg",
                    e.name
                ))),
            })
            .collect::<Result<Vec<_>>>()?
    } else if !args.adapters.is_empty() {
        args.adapters
            .iter()
            .map(|dir| Ok(load_adapter_dir(dir)?.0.profile()))
            .collect::<Result<Vec<_>>>()?
    } else {
        return Err(Error::Usage(
            "nothing to analyze: pass adapter dirs, --profile, or --reference".into(),
        ));
    };
    Ok((profiles, model))
}

fn cmd_analyze(args: AnalyzeArgs) -> Result<()> {
    let (profiles, model) = gather_profiles(&args)?;
    if profiles.is_empty() {
        return Err(Error::Input("the profile set is empty".into()));
    }
    let e_max = args.max_experts.unwrap_or_else(|| min_feasible_e_max(&profiles));
    let page = PageConfig {
        page_size: args.page_size.unwrap_or(DEFAULT_PAGE_SIZE),
        pool_capacity_pages: 0,
    };
    let f_mem = fragmentation_factor(&profiles, model.experts_per_layer, e_max)?;
    let report = dry_run_accounting(&profiles, &model, &page, e_max)?;

    if args.json {
        for (p, acct) in profiles.iter().zip(&report.per_adapter) {
            println!(
                "{}",
                json!({
                    "record": "adapter",
                    "name": p.name,
                    "max_experts": p.counts.max(),
                    "avg_experts": p.counts.avg(),
                    "sparsity": acct.sparsity,
                    "mapped_pages": acct.mapped_pages,
                })
            );
        }
        println!(
            "{}",
            json!({
                "record": "summary",
                "adapters": profiles.len(),
                "experts_per_layer": model.experts_per_layer,
                "layers": model.layers,
                "max_adapter_experts": e_max,
                "expert_size_bytes": report.expert_size_bytes,
                "page_size": report.page_size,
                "fragmentation_factor": f_mem,
                "padded_bytes": report.padded_bytes,
                "mapped_bytes": report.mapped_bytes,
                "pages_mapped": report.pages_mapped,
                "kv_budget_delta": report.kv_budget_delta,
                "savings_ratio": report.savings_ratio,
            })
        );
        return Ok(());
    }

    println!(
        "{} adapters over {} layers x {} experts (E_max = {}, expert = {} B, page = {} B)",
        profiles.len(),
        model.layers,
        model.experts_per_layer,
        e_max,
        report.expert_size_bytes,
        report.page_size
    );
    println!("{:<20} {:>4} {:>7} {:>9} {:>12}", "adapter", "max", "avg", "sparsity", "pages");
    for (p, acct) in profiles.iter().zip(&report.per_adapter) {
        println!(
            "{:<20} {:>4} {:>7.2} {:>9.3} {:>12}",
            p.name,
            p.counts.max(),
            p.counts.avg(),
            acct.sparsity,
            acct.mapped_pages
        );
    }
    println!("fragmentation factor of padded layout: {f_mem:.4}x");
    println!(
        "padded {} B vs mapped {} B ({} pages): {:.1}% saved, {} B freed for KV cache",
        report.padded_bytes,
        report.mapped_bytes,
        report.pages_mapped,
        report.savings_ratio * 100.0,
        report.kv_budget_delta
    );
    Ok(())
}

// -------------------------------------------------------------- gen-model

#[derive(Args)]
struct GenModelArgs {
    /// Output checkpoint directory.
    #[arg(long)]
    out: PathBuf,
    /// TOML file with the full model geometry; flags below override fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    experts: Option<usize>,
    #[arg(long)]
    top_k: Option<usize>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    intermediate: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn default_model_config() -> ModelConfig {
    ModelConfig {
        layers: 4,
        experts_per_layer: 16,
        top_k: 2,
        hidden_dim: 64,
        intermediate_dim: 32,
        dtype: Dtype::F32,
    }
}

fn cmd_gen_model(args: GenModelArgs) -> Result<()> {
    let mut model = match &args.config {
        Some(path) => read_toml(path)?,
        None => default_model_config(),
    };
    if let Some(v) = args.layers {
        model.layers = v;
    }
    if let Some(v) = args.experts {
        model.experts_per_layer = v;
    }
    if let Some(v) = args.top_k {
        model.top_k = v;
    }
    if let Some(v) = args.hidden {
        model.hidden_dim = v;
    }
    if let Some(v) = args.intermediate {
        model.intermediate_dim = v;
    }
    let base = gen_base_model(&model, args.seed)?;
    save_model(&args.out, &base)?;
    println!(
        "wrote {}: {} layers x {} experts (top-{}), hidden {}, intermediate {}, expert {} B",
        args.out.display(),
        model.layers,
        model.experts_per_layer,
        model.top_k,
        model.hidden_dim,
        model.intermediate_dim,
        model.expert_size_bytes()
    );
    println!("fingerprint: {}", model.fingerprint());
    Ok(())
}

// ----------------------------------------------------------- gen-adapters

#[derive(Args)]
struct GenAdaptersArgs {
    /// Base model checkpoint the adapters are for.
    #[arg(long)]
    model: PathBuf,
    /// Output directory; each adapter gets a subdirectory.
    #[arg(long)]
    out: PathBuf,
    /// How many adapters to generate.
    #[arg(long, default_value_t = 4)]
    count: usize,
    /// Fine-tuned experts in the busiest layer of each adapter.
    #[arg(long, default_value_t = 2)]
    max_experts: u32,
    /// Target expert sparsity (1 - avg/max across layers).
    #[arg(long, default_value_t = 0.5)]
    sparsity: f64,
    /// Adapter name prefix; names are `<prefix><index>`.
    #[arg(long, default_value = "adapter-")]
    prefix: String,
    /// Record a SHA-256 of the weights in each manifest.
    #[arg(long)]
    hash_weights: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn cmd_gen_adapters(args: GenAdaptersArgs) -> Result<()> {
    let model = load_model_config(&args.model)?;
    let shape = AdapterShape::TargetSparsity {
        max: args.max_experts,
        sparsity: args.sparsity,
    };
    for i in 0..args.count {
        let name = format!("{}{}", args.prefix, i);
        let (mut manifest, weights) =
            generate_synthetic_adapter(args.seed.wrapping_add(i as u64), &model, &name, &shape)?;
        if !args.hash_weights {
            manifest.weights_sha256 = None;
        }
        let dir = args.out.join(&name);
        save_adapter_dir(&dir, &manifest, &weights)?;
        let profile = manifest.profile();
        println!(
            "wrote {}: {} experts total (max {}/layer, sparsity {:.3}), {} B",
            dir.display(),
            manifest.total_experts(),
            profile.counts.max(),
            sparsity_factor(&profile)?,
            weights.len()
        );
    }
    Ok(())
}

// --------------------------------------------------------------- dump-map

#[derive(Args)]
struct DumpMapArgs {
    /// Base model checkpoint.
    #[arg(long)]
    model: PathBuf,
    /// Adapter directories to load, in slot order.
    #[arg(required = true)]
    adapters: Vec<PathBuf>,
    /// Restrict output to one layer.
    #[arg(long)]
    layer: Option<usize>,
    /// Per-adapter expert slot capacity; defaults to the smallest feasible.
    #[arg(long)]
    max_experts: Option<usize>,
    /// Emit JSONL records instead of a table.
    #[arg(long)]
    json: bool,
}

fn load_adapters(dirs: &[PathBuf]) -> Result<Vec<(AdapterManifest, Vec<u8>)>> {
    dirs.iter().map(|d| load_adapter_dir(d)).collect()
}

fn tool_engine_config(model: ModelConfig, max_adapters: usize, e_max: usize) -> EngineConfig {
    EngineConfig {
        model,
        page: PageConfig {
            page_size: DEFAULT_PAGE_SIZE,
            pool_capacity_pages: 1 << 20,
        },
        max_adapters: max_adapters.max(1),
        max_adapter_experts: e_max.max(1),
        token_budget: DEFAULT_TOKEN_BUDGET,
        step_base_cost: DEFAULT_STEP_BASE_COST,
        step_token_cost: DEFAULT_STEP_TOKEN_COST,
        clock: ClockMode::Simulated,
        seed: 0,
    }
}

fn cmd_dump_map(args: DumpMapArgs) -> Result<()> {
    let base = load_model(&args.model)?;
    let adapters = load_adapters(&args.adapters)?;
    let e_max = args.max_experts.unwrap_or_else(|| {
        adapters
            .iter()
            .map(|(m, _)| m.max_layer_count() as usize)
            .max()
            .unwrap_or(1)
    });
    let cfg = tool_engine_config(base.config.clone(), adapters.len(), e_max);
    let mut registry = AdapterRegistry::new(cfg, &base)?;
    for (manifest, weights) in &adapters {
        registry.load_adapter(manifest, weights)?;
    }

    let layers = match args.layer {
        Some(l) if l >= base.config.layers => {
            return Err(Error::Input(format!(
                "layer {} out of range {}",
                l, base.config.layers
            )))
        }
        Some(l) => l..l + 1,
        None => 0..base.config.layers,
    };
    for layer in layers {
        let map = registry.map_layer(layer);
        for (aid, loaded) in registry.loaded() {
            let remapped: Vec<(u32, u32)> = map
                .row(aid)
                .iter()
                .enumerate()
                .filter(|&(e, &slot)| slot != e as u32)
                .map(|(e, &slot)| (e as u32, slot))
                .collect();
            if args.json {
                println!(
                    "{}",
                    json!({
                        "layer": layer,
                        "adapter": loaded.manifest.name,
                        "aid": aid,
                        "slot_base": registry.slot_base(aid),
                        "remapped": remapped,
                    })
                );
            } else {
                let entries: Vec<String> = remapped
                    .iter()
                    .map(|(e, s)| format!("{e}->{s}"))
                    .collect();
                println!(
                    "layer {:>3}  {:<16} (aid {})  {}",
                    layer,
                    loaded.manifest.name,
                    aid,
                    if entries.is_empty() {
                        "identity".to_string()
                    } else {
                        entries.join(" ")
                    }
                );
            }
        }
    }
    Ok(())
}

// ----------------------------------------------------------------- verify

#[derive(Args)]
struct VerifyArgs {
    /// Base model checkpoint.
    #[arg(long)]
    model: PathBuf,
    /// Adapter directories to load and verify.
    #[arg(required = true)]
    adapters: Vec<PathBuf>,
    /// Randomized mixed batches to check.
    #[arg(long, default_value_t = 200)]
    cases: usize,
    /// Largest batch size drawn.
    #[arg(long, default_value_t = 16)]
    max_batch: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    json: bool,
}

fn cmd_verify(args: VerifyArgs) -> Result<()> {
    let base = load_model(&args.model)?;
    let adapters = load_adapters(&args.adapters)?;
    let e_max = adapters
        .iter()
        .map(|(m, _)| m.max_layer_count() as usize)
        .max()
        .unwrap_or(1);
    let cfg = tool_engine_config(base.config.clone(), adapters.len(), e_max);
    let mut registry = AdapterRegistry::new(cfg, &base)?;
    for (manifest, weights) in &adapters {
        registry.load_adapter(manifest, weights)?;
    }
    let report = verify_equivalence(
        &registry,
        &base,
        &adapters,
        &VerifyOptions {
            cases: args.cases,
            max_batch: args.max_batch,
            seed: args.seed,
        },
    )?;
    if args.json {
        println!("{}", serde_json::to_string(&report)?);
    } else {
        println!(
            "checked {} rows over {} batches: {}",
            report.rows_checked,
            report.cases,
            if report.ok() { "all bit-exact" } else { "MISMATCHES" }
        );
        for m in &report.mismatches {
            println!(
                "  case {} row {} adapter {:?}: diverges at layer {:?}, max |diff| {}",
                m.case, m.row, m.adapter, m.first_diverging_layer, m.max_abs_diff
            );
        }
    }
    if report.ok() {
        Ok(())
    } else {
        Err(Error::Validation(format!(
            "{} of {} rows diverged from the merged models",
            report.mismatches.len(),
            report.rows_checked
        )))
    }
}

// ------------------------------------------------------------ serve-bench

#[derive(Clone, Copy, ValueEnum)]
enum ClockArg {
    /// Deterministic virtual time.
    Sim,
    /// Real elapsed time, as fast as possible.
    Wall,
}

#[derive(Args)]
struct ServeBenchArgs {
    /// Base model checkpoint; a small built-in model is generated if omitted.
    #[arg(long)]
    model: Option<PathBuf>,
    /// TOML file of defaults for the flags below (same names).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Number of synthetic adapters to load and spread traffic over.
    #[arg(long, short = 'n')]
    adapters: Option<usize>,
    /// Power-law popularity exponent.
    #[arg(long)]
    alpha: Option<f64>,
    /// Total request rate (requests per second of trace time).
    #[arg(long)]
    rate: Option<f64>,
    /// Arrival window in seconds of trace time.
    #[arg(long)]
    duration: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Scheduling token budget per step (chunked prefill granularity).
    #[arg(long)]
    token_budget: Option<usize>,
    #[arg(long)]
    page_size: Option<usize>,
    #[arg(long)]
    pool_pages: Option<usize>,
    /// Per-adapter expert slot capacity E_max.
    #[arg(long)]
    max_experts: Option<usize>,
    /// Target sparsity of the synthetic adapters.
    #[arg(long)]
    sparsity: Option<f64>,
    #[arg(long, value_enum)]
    clock: Option<ClockArg>,
    /// Serve this JSONL trace instead of generating one.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Write the generated trace to this JSONL file.
    #[arg(long)]
    save_trace: Option<PathBuf>,
    /// Also time the fused rerouting kernel against the multi-pass
    /// composition over a sweep of batch sizes.
    #[arg(long)]
    reroute_sweep: bool,
    #[arg(long)]
    json: bool,
}

#[derive(Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct ServeFileConfig {
    adapters: Option<usize>,
    alpha: Option<f64>,
    rate: Option<f64>,
    duration: Option<f64>,
    seed: Option<u64>,
    token_budget: Option<usize>,
    page_size: Option<usize>,
    pool_pages: Option<usize>,
    max_experts: Option<usize>,
    sparsity: Option<f64>,
    clock: Option<ClockMode>,
}

fn cmd_serve_bench(args: ServeBenchArgs) -> Result<()> {
    let file: ServeFileConfig = match &args.config {
        Some(path) => read_toml(path)?,
        None => ServeFileConfig::default(),
    };
    // Precedence: flag, then config file, then default.
    let num_adapters = args.adapters.or(file.adapters).unwrap_or(4);
    let alpha = args.alpha.or(file.alpha).unwrap_or(0.32);
    let rate = args.rate.or(file.rate).unwrap_or(32.0);
    let duration = args.duration.or(file.duration).unwrap_or(2.0);
    let seed = args.seed.or(file.seed).unwrap_or(0);
    let token_budget = args.token_budget.or(file.token_budget).unwrap_or(DEFAULT_TOKEN_BUDGET);
    let page_size = args.page_size.or(file.page_size).unwrap_or(DEFAULT_PAGE_SIZE);
    let pool_pages = args.pool_pages.or(file.pool_pages).unwrap_or(1 << 20);
    let max_experts = args.max_experts.or(file.max_experts).unwrap_or(2);
    let sparsity = args.sparsity.or(file.sparsity).unwrap_or(0.5);
    let clock = match args.clock {
        Some(ClockArg::Sim) => ClockMode::Simulated,
        Some(ClockArg::Wall) => ClockMode::Wall,
        None => file.clock.unwrap_or(ClockMode::Simulated),
    };

    let base = match &args.model {
        Some(dir) => load_model(dir)?,
        None => gen_base_model(&default_model_config(), seed)?,
    };
    let cfg = EngineConfig {
        model: base.config.clone(),
        page: PageConfig {
            page_size,
            pool_capacity_pages: pool_pages,
        },
        max_adapters: num_adapters.max(1),
        max_adapter_experts: max_experts,
        token_budget,
        step_base_cost: DEFAULT_STEP_BASE_COST,
        step_token_cost: DEFAULT_STEP_TOKEN_COST,
        clock,
        seed,
    };
    let mut engine = ServingEngine::new(cfg.clone(), &base)?;
    for i in 0..num_adapters {
        let (manifest, weights) = generate_synthetic_adapter(
            seed.wrapping_add(1000 + i as u64),
            &cfg.model,
            &moeserve::serving::adapter_name(i),
            &AdapterShape::TargetSparsity {
                max: max_experts as u32,
                sparsity,
            },
        )?;
        engine.load_adapter(&manifest, &weights)?;
    }

    let trace = match &args.trace {
        Some(path) => load_trace(path)?,
        None => gen_workload(&WorkloadSpec::new(num_adapters, alpha, rate, duration), seed)?,
    };
    if let Some(path) = &args.save_trace {
        save_trace(path, &trace)?;
        // Status goes to stderr so `--json` stdout stays machine-parseable.
        eprintln!("wrote {} requests to {}", trace.len(), path.display());
    }

    let report = engine.run_trace(&trace)?;

    // Per-adapter latency breakdown.
    let mut by_adapter: Vec<(String, usize, Option<f64>)> = Vec::new();
    for i in 0..num_adapters {
        let name = moeserve::serving::adapter_name(i);
        let reqs: Vec<_> = engine
            .completed()
            .iter()
            .filter(|r| r.adapter.as_deref() == Some(name.as_str()))
            .collect();
        let tpots: Vec<f64> = reqs.iter().filter_map(|r| r.tpot()).collect();
        by_adapter.push((name, reqs.len(), latency_stats(&tpots).map(|s| s.p50)));
    }

    let sweep = if args.reroute_sweep {
        let batches: Vec<usize> = (0..=14).map(|i| 1usize << i).collect();
        Some(bench_reroute(
            engine.registry().map_layer(0),
            cfg.model.top_k,
            &batches,
            3,
            seed,
        ))
    } else {
        None
    };

    if args.json {
        let mut doc = json!({
            "config": {
                "adapters": num_adapters,
                "alpha": alpha,
                "rate": rate,
                "duration": duration,
                "seed": seed,
                "token_budget": token_budget,
                "clock": cfg.clock,
            },
            "report": report,
            "per_adapter": by_adapter
                .iter()
                .map(|(name, n, tpot)| json!({"adapter": name, "completed": n, "tpot_p50": tpot}))
                .collect::<Vec<_>>(),
            "pool": engine.registry().pool_stats(),
        });
        if let Some(s) = &sweep {
            doc["reroute_sweep"] = serde_json::to_value(s)?;
        }
        println!("{}", serde_json::to_string_pretty(&doc)?);
        return Ok(());
    }

    let s = &report.summary;
    println!(
        "served {} requests ({} rejected) in {} steps / {} tokens; makespan {:.3} s",
        s.completed, s.rejected, report.steps, report.tokens_processed, s.makespan
    );
    println!("decode throughput: {:.1} tok/s", s.decode_throughput);
    if let Some(t) = &s.ttft {
        println!(
            "TTFT  p50 {:.2} ms  p95 {:.2} ms  p99 {:.2} ms",
            t.p50 * 1e3, t.p95 * 1e3, t.p99 * 1e3
        );
    }
    if let Some(t) = &s.tpot {
        println!(
            "TPOT  p50 {:.2} ms  p95 {:.2} ms  p99 {:.2} ms",
            t.p50 * 1e3, t.p95 * 1e3, t.p99 * 1e3
        );
    }
    for (name, n, tpot) in &by_adapter {
        match tpot {
            Some(t) => println!("  {name:<16} {n:>4} requests  TPOT p50 {:.2} ms", t * 1e3),
            None => println!("  {name:<16} {n:>4} requests"),
        }
    }
    let pool = engine.registry().pool_stats();
    println!(
        "pool: {} pages in use ({} created, {} reused)",
        pool.in_use, pool.created, pool.reused
    );
    if let Some(records) = &sweep {
        println!("{:>7} {:>12} {:>12} {:>7}", "batch", "fused ns/tok", "multi ns/tok", "ratio");
        for r in records {
            println!(
                "{:>7} {:>12.2} {:>12.2} {:>7.3}",
                r.batch, r.fused_ns_per_token, r.multipass_ns_per_token, r.ratio
            );
        }
    }
    Ok(())
}
