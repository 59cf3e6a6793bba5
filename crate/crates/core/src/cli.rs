//! The `strata` command line: template, classify, monitor, binscan, estimate.
//!
//! Exit codes: 0 success, 1 a quality gate failed or a run was cut short,
//! 2 bad usage or bad input files, 3 the environment refused a probe
//! (privilege, missing kernel interface, wrong architecture).

use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};

use crate::classifier::{classify, filter_readaround};
use crate::config::{BackendConfig, BackendKind, Config};
use crate::estimate::{estimate_campaign, parse_layer_spec, EstimateParams, LayerCostSpec};
use crate::manifest::RunManifest;
use crate::monitor::{evaluate, monitor_stream, EvalReport, MonitorRun};
use crate::probes::{
    enumerate_mappings, FlushBackend, MappingSource, PageCacheBackend, PageIdleBackend,
    ProbeBackend, ProbeError, SimBackend,
};
use crate::report;
use crate::template::{BinaryFingerprint, ClassifiedTemplate};
use crate::templater::{run_campaign, CampaignRun};
use crate::trace::{AccessTrace, ScheduleEntry};
use crate::types::{Granularity, MemoryRegion, RegionSet};
use crate::{binscan, binscan::MarkerSet, binscan::MatchMode};

pub const EXIT_OK: i32 = 0;
pub const EXIT_GATE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_ENVIRONMENT: i32 = 3;

#[derive(Parser)]
#[command(name = "strata", version, about = "Memory-access templating toolkit")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a templating campaign and write per-layer hit matrices.
    Template(TemplateArgs),
    /// Turn a hit matrix into a monitoring template.
    Classify(ClassifyArgs),
    /// Watch template locations and report detections.
    Monitor(MonitorArgs),
    /// Map marker strings in a binary's read-only data.
    Binscan(BinscanArgs),
    /// Compare flat-sweep and layered campaign costs.
    Estimate(EstimateArgs),
}

#[derive(Args)]
struct TemplateArgs {
    /// Run configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Override the configured probe backend.
    #[arg(long)]
    backend: Option<String>,
    /// Override the configured RNG seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Directory for matrices and the run manifest.
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
    /// Sync and drop the kernel page cache before sampling.
    #[arg(long)]
    drop_caches: bool,
    /// Extra mapping-path substrings to exclude.
    #[arg(long)]
    blacklist: Vec<String>,
}

#[derive(Args)]
struct ClassifyArgs {
    /// Hit matrix CSV produced by `template`.
    #[arg(long)]
    matrix: PathBuf,
    /// Run configuration (TOML); classifier defaults apply without it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Trace whose fingerprint stamps the template.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Output template path.
    #[arg(long, default_value = "template.toml")]
    out: PathBuf,
}

#[derive(Args)]
struct MonitorArgs {
    /// Template produced by `classify`.
    #[arg(long)]
    template: PathBuf,
    /// Run configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Override the configured probe backend.
    #[arg(long)]
    backend: Option<String>,
    /// Override [monitor].rounds.
    #[arg(long)]
    rounds: Option<u64>,
    /// Trace file providing the true event schedule to score against.
    #[arg(long)]
    ground_truth: Option<PathBuf>,
    /// Fail (exit 1) when the macro F-score lands below this.
    #[arg(long)]
    min_fscore: Option<f64>,
    /// Directory for detections and scores.
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
    /// Sync and drop the kernel page cache before monitoring.
    #[arg(long)]
    drop_caches: bool,
}

#[derive(Args)]
struct BinscanArgs {
    /// ELF binary or shared object to scan.
    binary: PathBuf,
    /// Marker list, one string per line (default: the built-in key names).
    #[arg(long)]
    markers: Option<PathBuf>,
    /// Match markers anywhere instead of as whole NUL-terminated strings.
    #[arg(long)]
    substring: bool,
    /// Window sizes to tabulate pair co-location at.
    #[arg(long = "granularity", value_parser = parse_granularity, default_values = ["64", "4096"])]
    granularities: Vec<Granularity>,
    /// Also grade every marker pair's distinguishability.
    #[arg(long)]
    grade: bool,
    /// Second binary version to diff the layout against.
    #[arg(long)]
    diff: Option<PathBuf>,
    /// Directory for the CSV reports.
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct EstimateArgs {
    /// Cost parameters (TOML). Inline flags override nothing when this is set.
    #[arg(long, conflicts_with_all = ["flat_seconds_per_mb", "region_mb", "keys"])]
    params: Option<PathBuf>,
    #[arg(long, required_unless_present = "params")]
    flat_seconds_per_mb: Option<f64>,
    #[arg(long, required_unless_present = "params")]
    region_mb: Option<f64>,
    #[arg(long, required_unless_present = "params")]
    keys: Option<u32>,
    #[arg(long, default_value_t = 20)]
    samples_per_key: u32,
    /// Layer cost, e.g. "4K:total:3048" or "64:per-probe:0.002:46080".
    #[arg(long = "layer")]
    layers: Vec<String>,
    /// Write the estimate as TOML.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug)]
struct Failure {
    code: i32,
    message: String,
}

fn usage(message: impl Into<String>) -> Failure {
    Failure { code: EXIT_USAGE, message: message.into() }
}

fn environment(message: impl Into<String>) -> Failure {
    Failure { code: EXIT_ENVIRONMENT, message: message.into() }
}

fn probe_failure(context: &str, e: ProbeError) -> Failure {
    Failure {
        code: if e.is_environment() { EXIT_ENVIRONMENT } else { EXIT_USAGE },
        message: format!("{context}: {e}"),
    }
}

fn parse_granularity(s: &str) -> Result<Granularity, String> {
    s.parse::<Granularity>().map_err(|e| e.to_string())
}

pub fn main() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => {
                    EXIT_OK
                }
                _ => EXIT_USAGE,
            };
            let _ = e.print();
            return code;
        }
    };
    let result = match &cli.cmd {
        Cmd::Template(a) => cmd_template(a),
        Cmd::Classify(a) => cmd_classify(a),
        Cmd::Monitor(a) => cmd_monitor(a),
        Cmd::Binscan(a) => cmd_binscan(a),
        Cmd::Estimate(a) => cmd_estimate(a),
    };
    match result {
        Ok(code) => code,
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}

fn parse_backend_kind(s: &str) -> Result<BackendKind, Failure> {
    match s {
        "sim" => Ok(BackendKind::Sim),
        "pageidle" => Ok(BackendKind::PageIdle),
        "pagecache" => Ok(BackendKind::PageCache),
        "flush" => Ok(BackendKind::Flush),
        other => Err(usage(format!(
            "unknown backend {other:?} (expected sim, pageidle, pagecache, or flush)"
        ))),
    }
}

fn kind_name(kind: BackendKind) -> &'static str {
    match kind {
        BackendKind::Sim => "sim",
        BackendKind::PageIdle => "pageidle",
        BackendKind::PageCache => "pagecache",
        BackendKind::Flush => "flush",
    }
}

/// Live channels probe one fixed window size; only the simulator follows the
/// whole ladder.
fn fixed_granularity(kind: BackendKind) -> Option<Granularity> {
    match kind {
        BackendKind::Sim => None,
        BackendKind::PageIdle | BackendKind::PageCache => Some(Granularity::PAGE_4K),
        BackendKind::Flush => Some(Granularity::LINE),
    }
}

fn load_config(path: &Path) -> Result<(Config, String), Failure> {
    Config::load(path).map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn resolve(base: Option<&Path>, p: &Path) -> PathBuf {
    match base {
        Some(b) if p.is_relative() => b.join(p),
        _ => p.to_path_buf(),
    }
}

fn write_out(path: &Path, text: &str) -> Result<(), Failure> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)
                .map_err(|e| usage(format!("creating {}: {e}", dir.display())))?;
        }
    }
    std::fs::write(path, text).map_err(|e| usage(format!("writing {}: {e}", path.display())))
}

fn drop_caches() -> Result<(), Failure> {
    unsafe { libc::sync() };
    std::fs::write("/proc/sys/vm/drop_caches", "3")
        .map_err(|e| environment(format!("dropping page cache: {e}")))
}

type BackendFactory = Box<dyn FnMut(Granularity) -> Result<Box<dyn ProbeBackend>, ProbeError>>;

/// Resolves the probed regions and a per-granularity backend constructor.
fn backend_factory(
    backend: &BackendConfig,
    base: Option<&Path>,
    seed: u64,
    extra_blacklist: &[String],
    manifest: &mut RunManifest,
) -> Result<(RegionSet, BackendFactory), Failure> {
    let mut blacklist = backend.blacklist.clone();
    blacklist.extend(extra_blacklist.iter().cloned());
    match backend.kind {
        BackendKind::Sim => {
            let path = resolve(base, backend.trace.as_deref().expect("validated"));
            let bytes = std::fs::read(&path)
                .map_err(|e| usage(format!("reading trace {}: {e}", path.display())))?;
            manifest.record_input(&path.display().to_string(), &bytes);
            let trace = AccessTrace::load(&path)
                .map_err(|e| usage(format!("{}: {e}", path.display())))?;
            let regions = trace.regions.clone();
            let trace = Arc::new(trace);
            let factory: BackendFactory =
                Box::new(move |g| Ok(Box::new(SimBackend::new(trace.clone(), g, seed)) as Box<_>));
            Ok((regions, factory))
        }
        BackendKind::PageIdle => {
            let regions = mapped_regions(backend, base, &blacklist)?;
            let r = regions.clone();
            let hook = backend.injection_hook.clone();
            let factory: BackendFactory =
                Box::new(move |_| Ok(Box::new(PageIdleBackend::new(&r, hook.clone())?) as Box<_>));
            Ok((regions, factory))
        }
        BackendKind::PageCache => {
            let regions = if backend.target_pid.is_some() || backend.maps_file.is_some() {
                mapped_regions(backend, base, &blacklist)?
            } else {
                file_regions(&backend.files, base)?
            };
            let r = regions.clone();
            let hook = backend.injection_hook.clone();
            let eviction = backend.eviction.clone();
            let factory: BackendFactory = Box::new(move |_| {
                Ok(Box::new(PageCacheBackend::new(&r, eviction.clone(), hook.clone())?) as Box<_>)
            });
            Ok((regions, factory))
        }
        BackendKind::Flush => {
            let regions = mapped_regions(backend, base, &blacklist)?;
            let r = regions.clone();
            let hook = backend.injection_hook.clone();
            let factory: BackendFactory =
                Box::new(move |_| Ok(Box::new(FlushBackend::new(&r, hook.clone())?) as Box<_>));
            Ok((regions, factory))
        }
    }
}

fn mapped_regions(
    backend: &BackendConfig,
    base: Option<&Path>,
    blacklist: &[String],
) -> Result<RegionSet, Failure> {
    let maps_path = backend.maps_file.as_ref().map(|p| resolve(base, p));
    let source = match (backend.target_pid, &maps_path) {
        (Some(pid), _) => MappingSource::Pid(pid),
        (None, Some(path)) => MappingSource::File(path),
        (None, None) => return Err(usage("backend needs target_pid or maps_file")),
    };
    enumerate_mappings(source, blacklist).map_err(|e| probe_failure("enumerating mappings", e))
}

fn file_regions(files: &[PathBuf], base: Option<&Path>) -> Result<RegionSet, Failure> {
    let mut regions = Vec::with_capacity(files.len());
    for f in files {
        let path = resolve(base, f);
        let len = std::fs::metadata(&path)
            .map_err(|e| usage(format!("{}: {e}", path.display())))?
            .len();
        let region = MemoryRegion::new(path.display().to_string(), 0, len)
            .map_err(|e| usage(format!("{}: {e}", path.display())))?;
        regions.push(region);
    }
    RegionSet::new(regions).map_err(|e| usage(e.to_string()))
}

fn campaign_summary(run: &CampaignRun) {
    for (i, layer) in run.layers.iter().enumerate() {
        let status = if layer.complete { "" } else { " (partial)" };
        println!(
            "layer {i} @{}: {} survivors / {} locations, {} probes, theta {}{status}",
            layer.granularity,
            layer.survivors.len(),
            layer.matrix.locations().len(),
            layer.probe_count,
            layer.theta,
        );
    }
    for s in &run.skipped {
        println!("skipped @{}: {}", s.granularity, s.reason);
    }
    println!("total probes: {}", run.total_probe_count);
}

fn cmd_template(args: &TemplateArgs) -> Result<i32, Failure> {
    let (mut cfg, text) = load_config(&args.config)?;
    if let Some(kind) = &args.backend {
        cfg.backend.kind = parse_backend_kind(kind)?;
        cfg.validate().map_err(|e| usage(e.to_string()))?;
    }
    let Some(mut campaign) = cfg.campaign.clone() else {
        return Err(usage(format!(
            "{}: template needs a [campaign] section",
            args.config.display()
        )));
    };
    if let Some(seed) = args.seed {
        campaign.rng_seed = seed;
    }
    if args.drop_caches {
        drop_caches()?;
    }

    let mut manifest =
        RunManifest::new("template", kind_name(cfg.backend.kind), &text, campaign.rng_seed);
    if let Some(g) = fixed_granularity(cfg.backend.kind) {
        for dropped in campaign.ladder.iter().filter(|&&l| l != g) {
            manifest.notes.push(format!(
                "ladder layer @{dropped} skipped: the {} backend probes {g} windows",
                kind_name(cfg.backend.kind)
            ));
        }
        campaign.ladder.retain(|&l| l == g);
        if campaign.ladder.is_empty() {
            return Err(usage(format!(
                "no ladder layer matches the {} backend's {g} windows",
                kind_name(cfg.backend.kind)
            )));
        }
    }

    let base = args.config.parent();
    let (regions, factory) = backend_factory(
        &cfg.backend,
        base,
        campaign.rng_seed,
        &args.blacklist,
        &mut manifest,
    )?;
    let run =
        run_campaign(&campaign, &regions, factory).map_err(|e| usage(e.to_string()))?;

    for (i, layer) in run.layers.iter().enumerate() {
        let rows = report::matrix_rows(&layer.matrix);
        let csv = report::to_csv(&rows, Some(&manifest.run_id))
            .map_err(|e| usage(e.to_string()))?;
        let name = format!("layer_{i}_{}.csv", layer.granularity);
        write_out(&args.out_dir.join(name), &csv)?;
    }
    for s in &run.skipped {
        manifest.notes.push(format!("layer @{} skipped: {}", s.granularity, s.reason));
    }
    if let Some(i) = &run.interrupted {
        manifest.notes.push(format!(
            "interrupted at layer {} @{}: {}",
            i.layer, i.granularity, i.error
        ));
    }
    manifest.finish();
    manifest
        .save(&args.out_dir.join("manifest.toml"))
        .map_err(|e| usage(e.to_string()))?;

    campaign_summary(&run);
    println!("run id: {}", manifest.run_id);
    if let Some(i) = &run.interrupted {
        eprintln!("warning: run cut short at layer {} @{}: {}", i.layer, i.granularity, i.error);
        return Ok(EXIT_GATE);
    }
    Ok(EXIT_OK)
}

fn cmd_classify(args: &ClassifyArgs) -> Result<i32, Failure> {
    let classifier_cfg = match &args.config {
        Some(path) => load_config(path)?.0.classifier,
        None => Default::default(),
    };
    let text = std::fs::read_to_string(&args.matrix)
        .map_err(|e| usage(format!("{}: {e}", args.matrix.display())))?;
    let (rows, run_id) = report::from_csv::<report::MatrixRow>(&text)
        .map_err(|e| usage(format!("{}: {e}", args.matrix.display())))?;
    let matrix = report::matrix_from_rows(&rows).map_err(|e| usage(e.to_string()))?;

    let template = classify(&matrix, &classifier_cfg).map_err(|e| usage(e.to_string()))?;
    let mut template = filter_readaround(&template, &matrix, &classifier_cfg.readaround)
        .map_err(|e| usage(e.to_string()))?;
    template.run_id = run_id;
    if let Some(path) = &args.trace {
        let trace =
            AccessTrace::load(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
        template.fingerprint = BinaryFingerprint {
            sha256: trace.fingerprint.clone(),
            version: trace.binary_version.clone(),
        };
    }
    template.save(&args.out).map_err(|e| usage(e.to_string()))?;

    for e in &template.entries {
        let events: Vec<&str> = e.events.iter().map(|ev| ev.as_str()).collect();
        println!("{} -> {} (score {:.3})", events.join("+"), e.location, e.score);
    }
    for u in &template.unclassified {
        println!("unclassified: {u}");
    }
    for w in &template.warnings {
        eprintln!("warning: {w}");
    }
    println!("wrote {}", args.out.display());
    Ok(EXIT_OK)
}

fn monitor_granularity(
    kind: BackendKind,
    template: &ClassifiedTemplate,
) -> Result<Granularity, Failure> {
    if let Some(g) = fixed_granularity(kind) {
        return Ok(g);
    }
    template
        .entries
        .iter()
        .map(|e| e.location.granularity)
        .max()
        .ok_or_else(|| usage("template has no entries to monitor"))
}

fn eval_summary(report: &EvalReport) {
    for row in &report.rows {
        println!(
            "{}: tp {} fp {} fn {} precision {:.3} recall {:.3} f {:.3}",
            row.event, row.true_pos, row.false_pos, row.false_neg, row.precision, row.recall,
            row.f_score,
        );
    }
    println!("macro f-score: {:.4}", report.macro_f);
}

fn cmd_monitor(args: &MonitorArgs) -> Result<i32, Failure> {
    let (mut cfg, text) = load_config(&args.config)?;
    if let Some(kind) = &args.backend {
        cfg.backend.kind = parse_backend_kind(kind)?;
        cfg.validate().map_err(|e| usage(e.to_string()))?;
    }
    let template = ClassifiedTemplate::load(&args.template)
        .map_err(|e| usage(format!("{}: {e}", args.template.display())))?;
    if args.drop_caches {
        drop_caches()?;
    }
    let rounds = args.rounds.unwrap_or(cfg.monitor.rounds);
    let seed = cfg.campaign.as_ref().map(|c| c.rng_seed).unwrap_or(0);

    let mut manifest = RunManifest::new("monitor", kind_name(cfg.backend.kind), &text, seed);
    let base = args.config.parent();
    let (_, mut factory) = backend_factory(&cfg.backend, base, seed, &[], &mut manifest)?;
    let g = monitor_granularity(cfg.backend.kind, &template)?;
    let mut backend = factory(g).map_err(|e| probe_failure("creating backend", e))?;

    let run: MonitorRun = monitor_stream(
        &template,
        backend.as_mut(),
        rounds,
        &cfg.monitor.monitor_config(),
    )
    .map_err(|e| usage(e.to_string()))?;

    let run_id = template.run_id.as_deref();
    let rows = report::detection_rows(&run.detections);
    let csv = report::to_csv(&rows, run_id).map_err(|e| usage(e.to_string()))?;
    write_out(&args.out_dir.join("detections.csv"), &csv)?;
    println!(
        "{} detections over {} rounds",
        run.detections.len(),
        run.rounds_completed
    );

    let mut gate_failed = false;
    if let Some(path) = &args.ground_truth {
        let trace =
            AccessTrace::load(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
        let truth: Vec<ScheduleEntry> = trace
            .ground_truth()
            .into_iter()
            .map(|(round, event)| ScheduleEntry { round, event })
            .collect();
        let eval = evaluate(&run.detections, &truth, cfg.monitor.tolerance);
        let csv = report::to_csv(&eval.rows, run_id).map_err(|e| usage(e.to_string()))?;
        write_out(&args.out_dir.join("eval.csv"), &csv)?;
        eval_summary(&eval);
        if let Some(min) = args.min_fscore {
            if eval.macro_f < min {
                eprintln!("macro f-score {:.4} below the {min} gate", eval.macro_f);
                gate_failed = true;
            }
        }
    } else if args.min_fscore.is_some() {
        return Err(usage("--min-fscore needs --ground-truth"));
    }

    if let Some(i) = &run.interrupted {
        manifest.notes.push(format!("interrupted: {i}"));
    }
    manifest.finish();
    manifest
        .save(&args.out_dir.join("monitor_manifest.toml"))
        .map_err(|e| usage(e.to_string()))?;

    if let Some(i) = &run.interrupted {
        eprintln!("warning: monitoring cut short: {i}");
        return Ok(EXIT_GATE);
    }
    Ok(if gate_failed { EXIT_GATE } else { EXIT_OK })
}

fn cmd_binscan(args: &BinscanArgs) -> Result<i32, Failure> {
    let mode = if args.substring { MatchMode::Substring } else { MatchMode::Exact };
    let markers = match &args.markers {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| usage(format!("{}: {e}", path.display())))?;
            MarkerSet::from_lines(&text, mode).map_err(|e| usage(e.to_string()))?
        }
        None => {
            let set = MarkerSet::default_keyset();
            if args.substring {
                MarkerSet::new(set.markers().to_vec(), mode).map_err(|e| usage(e.to_string()))?
            } else {
                set
            }
        }
    };

    let scan_file = |path: &Path| {
        binscan::scan(path, &markers, &args.granularities)
            .map_err(|e| usage(format!("{}: {e}", path.display())))
    };
    let layout = scan_file(&args.binary)?;

    let occ = report::to_csv(&report::occurrence_rows(&layout), None)
        .map_err(|e| usage(e.to_string()))?;
    write_out(&args.out_dir.join("occurrences.csv"), &occ)?;
    let pairs = report::to_csv(&report::pair_rows(&layout), None)
        .map_err(|e| usage(e.to_string()))?;
    write_out(&args.out_dir.join("pairs.csv"), &pairs)?;

    let found = layout.markers.iter().filter(|m| !m.occurrences.is_empty()).count();
    println!(
        "{}: {found}/{} markers present, image sha256 {}",
        args.binary.display(),
        layout.markers.len(),
        &layout.sha256[..16],
    );

    if args.grade {
        let grades = binscan::leakage_grade(&layout, &markers);
        let csv = report::to_csv(&report::grade_rows(&grades), None)
            .map_err(|e| usage(e.to_string()))?;
        write_out(&args.out_dir.join("grades.csv"), &csv)?;
        println!("overall grade: {}", binscan::summary_grade(&grades));
    }

    if let Some(other) = &args.diff {
        let other_layout = scan_file(other)?;
        let delta = binscan::diff_layouts(&layout, &other_layout)
            .map_err(|e| usage(e.to_string()))?;
        if delta.is_empty() {
            println!("no layout changes against {}", other.display());
        } else {
            for m in &delta.moved {
                println!("moved: {} {:?} -> {:?}", m.marker, m.from, m.to);
            }
            for c in &delta.count_changes {
                let tag = if c.deduplicated { " (deduplicated)" } else { "" };
                println!("count: {} {} -> {}{tag}", c.marker, c.from, c.to);
            }
            for t in &delta.transitions {
                println!("pair: {}/{} @{}: {} -> {}", t.a, t.b, t.granularity, t.from, t.to);
            }
        }
    }
    Ok(EXIT_OK)
}

fn cmd_estimate(args: &EstimateArgs) -> Result<i32, Failure> {
    let params = match &args.params {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| usage(format!("{}: {e}", path.display())))?;
            let mut p: EstimateParams = toml::from_str(&text)
                .map_err(|e| usage(format!("{}: {e}", path.display())))?;
            for spec in &args.layers {
                p.layers.push(parse_layer_spec(spec).map_err(|e| usage(e.to_string()))?);
            }
            p
        }
        None => {
            let layers: Vec<LayerCostSpec> = args
                .layers
                .iter()
                .map(|s| parse_layer_spec(s))
                .collect::<Result<_, _>>()
                .map_err(|e| usage(e.to_string()))?;
            EstimateParams {
                flat_seconds_per_mb: args.flat_seconds_per_mb.expect("required by clap"),
                region_mb: args.region_mb.expect("required by clap"),
                keys: args.keys.expect("required by clap"),
                samples_per_key: args.samples_per_key,
                layers,
            }
        }
    };
    let estimate = estimate_campaign(&params).map_err(|e| usage(e.to_string()))?;

    println!(
        "flat sweep: {:.0} s ({:.2} days)",
        estimate.flat_seconds,
        estimate.flat_days()
    );
    for layer in &estimate.layers {
        println!("  layer @{}: {:.1} s", layer.granularity, layer.seconds);
    }
    if !estimate.layers.is_empty() {
        println!(
            "layered: {:.0} s ({:.2} hours)",
            estimate.layered_seconds,
            estimate.layered_hours()
        );
    }
    if let Some(speedup) = estimate.speedup {
        println!("speedup: {speedup:.1}x");
    }
    if let Some(out) = &args.out {
        let text = toml::to_string_pretty(&estimate).map_err(|e| usage(e.to_string()))?;
        write_out(out, &text)?;
    }
    Ok(EXIT_OK)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backend_names_round_trip() {
        for kind in [
            BackendKind::Sim,
            BackendKind::PageIdle,
            BackendKind::PageCache,
            BackendKind::Flush,
        ] {
            assert_eq!(parse_backend_kind(kind_name(kind)).unwrap(), kind);
        }
        assert!(parse_backend_kind("made-up").is_err());
    }

    #[test]
    fn live_backends_pin_their_granularity() {
        assert_eq!(fixed_granularity(BackendKind::Sim), None);
        assert_eq!(
            fixed_granularity(BackendKind::PageCache),
            Some(Granularity::PAGE_4K)
        );
        assert_eq!(fixed_granularity(BackendKind::Flush), Some(Granularity::LINE));
    }

    #[test]
    fn relative_paths_resolve_against_the_config_dir() {
        let base = Path::new("/etc/strata");
        assert_eq!(resolve(Some(base), Path::new("t.toml")), Path::new("/etc/strata/t.toml"));
        assert_eq!(resolve(Some(base), Path::new("/abs/t.toml")), Path::new("/abs/t.toml"));
        assert_eq!(resolve(None, Path::new("t.toml")), Path::new("t.toml"));
    }

    #[test]
    fn cli_args_parse() {
        let cli = Cli::try_parse_from([
            "strata", "template", "--config", "run.toml", "--seed", "9", "--out-dir", "out",
        ])
        .unwrap();
        match cli.cmd {
            Cmd::Template(a) => {
                assert_eq!(a.seed, Some(9));
                assert_eq!(a.out_dir, Path::new("out"));
            }
            _ => panic!("wrong subcommand"),
        }
        let cli = Cli::try_parse_from([
            "strata",
            "binscan",
            "app.so",
            "--granularity",
            "64",
            "--granularity",
            "4K",
            "--grade",
        ])
        .unwrap();
        match cli.cmd {
            Cmd::Binscan(a) => {
                assert_eq!(a.granularities, vec![Granularity::LINE, Granularity::PAGE_4K]);
                assert!(a.grade);
            }
            _ => panic!("wrong subcommand"),
        }
        assert!(Cli::try_parse_from(["strata", "estimate"]).is_err());
    }

    #[test]
    fn monitor_granularity_is_the_coarsest_entry() {
        use crate::template::TemplateEntry;
        use crate::types::{EventId, Location};
        let t = ClassifiedTemplate::new(vec![
            TemplateEntry::new(
                vec![EventId::new("KeyA").unwrap()],
                Location { source: "app".into(), offset: 0, granularity: Granularity::LINE },
                1.0,
            ),
            TemplateEntry::new(
                vec![EventId::new("KeyB").unwrap()],
                Location { source: "app".into(), offset: 4096, granularity: Granularity::PAGE_4K },
                1.0,
            ),
        ]);
        assert_eq!(
            monitor_granularity(BackendKind::Sim, &t).unwrap(),
            Granularity::PAGE_4K
        );
        assert_eq!(
            monitor_granularity(BackendKind::Flush, &t).unwrap(),
            Granularity::LINE
        );
        let empty = ClassifiedTemplate::new(Vec::new());
        assert!(monitor_granularity(BackendKind::Sim, &empty).is_err());
    }
}
