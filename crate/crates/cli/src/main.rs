//! `psketch` command-line front end: synthesize traces, replay them through
//! the monitoring pipeline and measure throughput.

mod report;

use std::fs;
use std::io::Write;
use std::num::{NonZeroU64, NonZeroUsize};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::error::ErrorKind;
use clap::{Args, CommandFactory, Parser, Subcommand};

use psketch::bench::measure;
use psketch::flow::DEFAULT_RETRANS_THRESHOLD_NS;
use psketch::priority::parse_priority_keys;
use psketch::trace::{generate, read_pcap_bytes, write_pcap, SynthConfig, Trace};
use psketch::{compute_metrics, oracle, FlowKey, GroundTruth, Observed, Pipeline, PipelineConfig};

use report::{
    sha256_hex, BenchOutput, FileIdentity, RunManifest, RunReport, TraceIdentity, TruthIdentity,
};

#[derive(Parser)]
#[command(
    name = "psketch",
    version,
    about = "Priority-aware flow monitoring over packet traces"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic pcap trace and its ground-truth sidecar
    Generate(GenerateArgs),
    /// Replay a trace through the pipeline and print a JSON report
    Run(RunArgs),
    /// Measure single-threaded pipeline throughput
    Bench(BenchArgs),
}

#[derive(Args)]
struct GenerateArgs {
    /// Output pcap path; the sidecar is written next to it as `<out>.truth`
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    synth: SynthArgs,
}

#[derive(Args)]
struct RunArgs {
    /// Classic pcap trace to replay
    #[arg(long)]
    trace: PathBuf,
    /// Number of heavy flows to report
    #[arg(long, default_value = "50")]
    k: NonZeroUsize,
    /// Priority flow list, one `src_ip,dst_ip,src_port,dst_port,proto` per line
    #[arg(long)]
    priority: Option<PathBuf>,
    /// Compute ground truth from the trace itself and include metrics
    #[arg(long, conflicts_with = "truth")]
    oracle: bool,
    /// Ground-truth sidecar written by `generate`; includes metrics
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Write the JSON report here instead of stdout
    #[arg(long)]
    out: Option<PathBuf>,
    /// Append a metrics row to this CSV file (requires --oracle or --truth)
    #[arg(long)]
    csv: Option<PathBuf>,
    #[command(flatten)]
    pipeline: PipelineArgs,
}

#[derive(Args)]
struct BenchArgs {
    /// Replay this trace instead of synthesizing one in memory
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Priority flow list registered before every pass
    #[arg(long)]
    priority: Option<PathBuf>,
    /// Timed passes over the trace
    #[arg(long, default_value = "3")]
    passes: NonZeroUsize,
    /// Write the JSON summary here instead of stdout
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    synth: SynthArgs,
    #[command(flatten)]
    pipeline: PipelineArgs,
}

#[derive(Args)]
struct SynthArgs {
    /// Distinct flows [generate: 1000, bench: 10000]
    #[arg(long)]
    flows: Option<NonZeroUsize>,
    /// Original packets, before injected retransmissions [generate: 100000, bench: 1000000]
    #[arg(long)]
    packets: Option<NonZeroU64>,
    /// Zipf exponent of the flow-size distribution
    #[arg(long, default_value = "1.0", value_parser = parse_non_negative)]
    zipf: f64,
    /// Fraction of flows that are TCP
    #[arg(long, default_value = "0.8", value_parser = parse_fraction)]
    tcp_fraction: f64,
    /// Probability that a TCP segment is duplicated
    #[arg(long, default_value = "0", value_parser = parse_fraction)]
    retrans_rate: f64,
    /// Quiet time before a duplicate, in milliseconds
    #[arg(long, default_value = "5", value_parser = parse_non_negative)]
    retrans_gap_ms: f64,
    /// Generator seed
    #[arg(long, default_value = "42")]
    seed: u64,
}

#[derive(Args)]
struct PipelineArgs {
    /// `key = value` config file; flags override its values
    #[arg(long, env = "PSKETCH_CONFIG")]
    config: Option<PathBuf>,
    #[arg(long)]
    heavy_size: Option<NonZeroUsize>,
    #[arg(long)]
    vote_threshold: Option<NonZeroU64>,
    /// Minimum gap before a stale sequence number counts as a retransmission
    #[arg(long, value_parser = parse_non_negative)]
    retrans_threshold_ms: Option<f64>,
    /// Linear counter cells
    #[arg(long)]
    lc_size: Option<NonZeroUsize>,
    /// Count-min sketch width per layer
    #[arg(long)]
    cms_width: Option<NonZeroUsize>,
    /// Overwrite the expected sequence even on a detected retransmission
    #[arg(long)]
    alg1_literal_update: bool,
    /// Add evicted statistics at the incoming key's sketch cells
    #[arg(long)]
    alg1_literal_cms: bool,
    /// Feed every non-priority packet to the linear counter and sketch
    #[arg(long)]
    alg1_literal_routing: bool,
    /// Clear negative votes when the occupant receives a packet
    #[arg(long)]
    reset_votes_on_match: bool,
}

fn parse_fraction(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|_| format!("{s:?} is not a number"))?;
    if (0.0..=1.0).contains(&v) {
        Ok(v)
    } else {
        Err(format!("{v} is outside [0, 1]"))
    }
}

fn parse_non_negative(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|_| format!("{s:?} is not a number"))?;
    if v.is_finite() && v >= 0.0 {
        Ok(v)
    } else {
        Err(format!("{v} must be a finite non-negative number"))
    }
}

fn ms_to_ns(ms: f64) -> u64 {
    (ms * 1e6).round() as u64
}

fn usage_error(msg: impl std::fmt::Display) -> ! {
    Cli::command().error(ErrorKind::ValueValidation, msg).exit()
}

impl SynthArgs {
    fn resolve(&self, default_flows: usize, default_packets: u64) -> SynthConfig {
        let cfg = SynthConfig {
            flow_count: self.flows.map_or(default_flows, NonZeroUsize::get),
            total_packets: self.packets.map_or(default_packets, NonZeroU64::get),
            zipf_alpha: self.zipf,
            tcp_fraction: self.tcp_fraction,
            retrans_rate: self.retrans_rate,
            retrans_gap_ns: ms_to_ns(self.retrans_gap_ms),
            rng_seed: self.seed,
            ..SynthConfig::default()
        };
        if let Err(e) = cfg.validate() {
            usage_error(e);
        }
        cfg
    }
}

impl PipelineArgs {
    fn resolve(&self) -> Result<(PipelineConfig, Option<FileIdentity>)> {
        let mut cfg = PipelineConfig::default();
        let mut source = None;
        if let Some(path) = &self.config {
            let text = fs::read_to_string(path)
                .with_context(|| format!("reading config file {}", path.display()))?;
            cfg.apply_text(&text)
                .with_context(|| format!("config file {}", path.display()))?;
            source = Some(FileIdentity::new(path, text.as_bytes()));
        }
        if let Some(v) = self.heavy_size {
            cfg.heavy_table_size = v.get();
        }
        if let Some(v) = self.vote_threshold {
            cfg.vote_threshold = v.get();
        }
        if let Some(v) = self.retrans_threshold_ms {
            cfg.retrans_threshold_ns = ms_to_ns(v);
        }
        if let Some(v) = self.lc_size {
            cfg.lc_size = v.get();
        }
        if let Some(v) = self.cms_width {
            cfg.cms_width = v.get();
        }
        cfg.flags.alg1_literal_update |= self.alg1_literal_update;
        cfg.flags.alg1_literal_cms |= self.alg1_literal_cms;
        cfg.flags.alg1_literal_routing |= self.alg1_literal_routing;
        cfg.flags.reset_votes_on_match |= self.reset_votes_on_match;
        cfg.validate().context("invalid pipeline configuration")?;
        Ok((cfg, source))
    }
}

fn load_trace(path: &Path) -> Result<(Trace, TraceIdentity)> {
    let bytes = fs::read(path).with_context(|| format!("reading trace {}", path.display()))?;
    let trace =
        read_pcap_bytes(&bytes).with_context(|| format!("decoding trace {}", path.display()))?;
    if let Some(offset) = trace.truncated_at {
        eprintln!(
            "warning: {} ends inside a record at byte {offset}; the partial record was ignored",
            path.display()
        );
    }
    let identity = TraceIdentity {
        path: path.display().to_string(),
        sha256: sha256_hex(&bytes),
        packets: trace.packets.len(),
        skipped: trace.skipped,
        truncated_at: trace.truncated_at,
    };
    Ok((trace, identity))
}

fn load_priority(path: &Path) -> Result<(Vec<FlowKey>, FileIdentity)> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading priority file {}", path.display()))?;
    let keys =
        parse_priority_keys(&text).with_context(|| format!("priority file {}", path.display()))?;
    Ok((keys, FileIdentity::new(path, text.as_bytes())))
}

fn load_truth(path: &Path) -> Result<(GroundTruth, FileIdentity)> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading truth sidecar {}", path.display()))?;
    let truth = GroundTruth::from_sidecar(&text)
        .with_context(|| format!("truth sidecar {}", path.display()))?;
    Ok((truth, FileIdentity::new(path, text.as_bytes())))
}

fn register_all(pipeline: &mut Pipeline, keys: &[FlowKey]) -> Result<()> {
    for key in keys {
        pipeline
            .register_priority(*key)
            .with_context(|| format!("registering priority flow {key}"))?;
    }
    Ok(())
}

fn emit(out: Option<&Path>, json: &str) -> Result<()> {
    match out {
        Some(path) => fs::write(path, format!("{json}\n"))
            .with_context(|| format!("writing {}", path.display())),
        None => {
            let mut stdout = std::io::stdout().lock();
            writeln!(stdout, "{json}")?;
            Ok(())
        }
    }
}

fn sidecar_path(out: &Path) -> PathBuf {
    let mut name = out.as_os_str().to_owned();
    name.push(".truth");
    PathBuf::from(name)
}

fn cmd_generate(args: &GenerateArgs) -> Result<()> {
    let cfg = args.synth.resolve(1000, 100_000);
    for w in cfg.warnings(DEFAULT_RETRANS_THRESHOLD_NS) {
        eprintln!("warning: {w}");
    }
    let synth = generate(&cfg)?;
    write_pcap(&args.out, &synth.trace.packets)
        .with_context(|| format!("writing {}", args.out.display()))?;
    let truth_path = sidecar_path(&args.out);
    let sidecar = synth.truth.to_sidecar();
    fs::write(&truth_path, &sidecar)
        .with_context(|| format!("writing {}", truth_path.display()))?;

    let pcap_bytes = fs::read(&args.out)?;
    println!(
        "wrote {} ({} packets, sha256 {})",
        args.out.display(),
        synth.trace.packets.len(),
        sha256_hex(&pcap_bytes)
    );
    println!(
        "wrote {} ({} flows, sha256 {})",
        truth_path.display(),
        synth.truth.distinct_flows,
        sha256_hex(sidecar.as_bytes())
    );
    println!(
        "flows={} packets={} injected_retransmissions={}",
        synth.truth.distinct_flows,
        synth.trace.packets.len(),
        synth.injected_retrans
    );
    Ok(())
}

fn cmd_run(args: &RunArgs) -> Result<()> {
    if args.csv.is_some() && !args.oracle && args.truth.is_none() {
        usage_error("--csv needs ground truth: pass --oracle or --truth");
    }
    let (config, config_file) = args.pipeline.resolve()?;
    let (trace, trace_id) = load_trace(&args.trace)?;
    let (priority_keys, priority_file) = match &args.priority {
        Some(path) => {
            let (keys, id) = load_priority(path)?;
            (keys, Some(id))
        }
        None => (Vec::new(), None),
    };
    let (truth, truth_id) = if args.oracle {
        (Some(oracle(&trace.packets)), Some(TruthIdentity::Oracle))
    } else if let Some(path) = &args.truth {
        let (truth, id) = load_truth(path)?;
        (Some(truth), Some(TruthIdentity::Sidecar(id)))
    } else {
        (None, None)
    };

    let mut pipeline = Pipeline::new(config.clone())?;
    register_all(&mut pipeline, &priority_keys)?;
    pipeline.add_skipped(trace.skipped);
    let start = Instant::now();
    pipeline.process_all(&trace.packets);
    let secs = start.elapsed().as_secs_f64().max(1e-9);
    let throughput_pps = trace.packets.len() as f64 / secs;

    let k = args.k.get();
    let topk = pipeline.top_k(k);
    let priority = pipeline.priority_reports();
    let cardinality = match pipeline.cardinality_estimate() {
        Ok(c) => Some(c),
        Err(e) => {
            eprintln!("warning: {e}; raise --lc-size");
            None
        }
    };
    let metrics = truth.as_ref().map(|truth| {
        compute_metrics(
            &Observed {
                topk: &topk,
                priority: &priority,
                combined_cardinality: cardinality.map(|c| c.combined),
                throughput_pps,
            },
            truth,
            k,
        )
    });

    if let (Some(path), Some(m)) = (&args.csv, &metrics) {
        let fresh = fs::metadata(path).map(|md| md.len() == 0).unwrap_or(true);
        let mut f = fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .with_context(|| format!("opening {}", path.display()))?;
        if fresh {
            writeln!(f, "{}", psketch::MetricsReport::CSV_HEADER)?;
        }
        writeln!(f, "{}", m.csv_row(k))?;
    }

    let report = RunReport {
        manifest: RunManifest::new(config, config_file, trace_id, priority_file, truth_id, k),
        pipeline_stats: *pipeline.stats(),
        topk,
        priority,
        cardinality,
        throughput_pps,
        metrics,
    };
    emit(args.out.as_deref(), &serde_json::to_string_pretty(&report)?)
}

fn cmd_bench(args: &BenchArgs) -> Result<()> {
    let (config, config_file) = args.pipeline.resolve()?;
    let (packets, trace_id, synth) = match &args.trace {
        Some(path) => {
            let (trace, id) = load_trace(path)?;
            (trace.packets, Some(id), None)
        }
        None => {
            let cfg = args.synth.resolve(10_000, 1_000_000);
            let synth = generate(&cfg)?;
            (synth.trace.packets, None, Some(cfg))
        }
    };
    if packets.is_empty() {
        bail!("trace has no IPv4 TCP/UDP packets to replay");
    }
    let priority = match &args.priority {
        Some(path) => load_priority(path)?.0,
        None => Vec::new(),
    };
    if priority.len() > config.priority_capacity {
        bail!(
            "{} priority flows exceed the table capacity {}",
            priority.len(),
            config.priority_capacity
        );
    }
    let bench = measure(&config, &priority, &packets, args.passes.get())?;
    let out = BenchOutput {
        tool: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        config,
        config_file,
        trace: trace_id,
        synthetic: synth,
        priority_flows: priority.len(),
        bench,
    };
    emit(args.out.as_deref(), &serde_json::to_string_pretty(&out)?)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Generate(a) => cmd_generate(a),
        Command::Run(a) => cmd_run(a),
        Command::Bench(a) => cmd_bench(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fraction_bounds() {
        assert_eq!(parse_fraction("0"), Ok(0.0));
        assert_eq!(parse_fraction("1"), Ok(1.0));
        assert!(parse_fraction("1.5").is_err());
        assert!(parse_fraction("-0.01").is_err());
        assert!(parse_fraction("NaN").is_err());
        assert!(parse_fraction("half").is_err());
    }

    #[test]
    fn non_negative_rejects_infinity() {
        assert_eq!(parse_non_negative("2.5"), Ok(2.5));
        assert!(parse_non_negative("inf").is_err());
        assert!(parse_non_negative("-1").is_err());
    }

    #[test]
    fn milliseconds_to_nanoseconds() {
        assert_eq!(ms_to_ns(3.0), 3_000_000);
        assert_eq!(ms_to_ns(0.0015), 1_500);
        assert_eq!(ms_to_ns(0.0), 0);
    }

    #[test]
    fn sidecar_sits_next_to_trace() {
        assert_eq!(
            sidecar_path(Path::new("out/t.pcap")),
            PathBuf::from("out/t.pcap.truth")
        );
    }

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }
}
