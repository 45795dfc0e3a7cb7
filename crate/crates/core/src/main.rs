use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use did::config::{ClassMode, RunConfig};
use did::context::ContextTracker;
use did::dataset::{self, LabelManifest, MatrixFile, Split};
use did::eval::multiclass_report;
use did::matrix::build_matrix;
use did::nn::{Checkpoint, Model, Variant};
use did::pipeline;
use did::synth::{self, ScenarioConfig};

#[derive(Parser)]
#[command(name = "did", version, about = "Content-based intrusion detection over packet captures")]
struct Cli {
    #[command(flatten)]
    settings: Settings,
    #[command(subcommand)]
    command: Command,
}

/// Overrides applied on top of defaults, an artifact's embedded config, and `--config`.
#[derive(Args, Default)]
struct Settings {
    /// Flat key=value configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    ctx_bucket: Option<usize>,
    #[arg(long, global = true)]
    ctx_window_ms: Option<u64>,
    #[arg(long, global = true)]
    flow_timeout_ms: Option<u64>,
    #[arg(long, global = true)]
    max_packets: Option<usize>,
    #[arg(long, global = true)]
    max_bytes: Option<usize>,
    #[arg(long, global = true)]
    variant: Option<Variant>,
    #[arg(long, global = true)]
    classes: Option<Classes>,
    #[arg(long, global = true)]
    epochs: Option<usize>,
    #[arg(long, global = true)]
    batch_size: Option<usize>,
    #[arg(long, global = true)]
    lr: Option<f64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Classes {
    Binary,
    Multi,
}

#[derive(Clone, Copy, ValueEnum)]
enum Profile {
    Pattern,
    Flood,
    Scan,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a labeled synthetic capture.
    Synth {
        #[arg(long)]
        seed: u64,
        #[arg(long, default_value_t = 500)]
        benign: usize,
        #[arg(long, default_value_t = 500)]
        attack: usize,
        #[arg(long, value_enum, default_value = "pattern")]
        profile: Profile,
        /// Use separate address pools for attack traffic.
        #[arg(long)]
        disjoint_ips: bool,
        #[arg(short, long)]
        out: PathBuf,
        /// Label manifest output.
        #[arg(short, long)]
        manifest: PathBuf,
        /// Summary JSON output.
        #[arg(long)]
        summary: Option<PathBuf>,
    },
    /// Summarize the flows in a capture.
    Extract {
        pcap: PathBuf,
        /// Also list every flow.
        #[arg(long)]
        flows: bool,
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Turn a capture into matrices (DIDM).
    Featurize {
        pcap: PathBuf,
        /// Label manifest; without it records are unlabeled.
        #[arg(short, long)]
        labels: Option<PathBuf>,
        /// Clear the context row of every matrix.
        #[arg(long)]
        zero_context: bool,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Subsample classes to balance a DIDM file.
    Balance {
        input: PathBuf,
        #[arg(long)]
        seed: u64,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Stratified train/val/test split or k folds.
    Split {
        input: PathBuf,
        #[arg(long)]
        seed: u64,
        /// Output prefix; writes PREFIX.{train,val,test}.didm and PREFIX.split.txt.
        #[arg(short, long)]
        out: PathBuf,
        /// Write PREFIX.folds.txt with k stratified folds instead.
        #[arg(long)]
        kfold: Option<usize>,
    },
    /// Train a model (DIDC checkpoint plus history CSV).
    Train {
        train: PathBuf,
        /// Validation set; defaults to the sibling `.val.` file of a `.train.` input.
        #[arg(long)]
        val: Option<PathBuf>,
        #[arg(long)]
        seed: u64,
        #[arg(short, long)]
        out: PathBuf,
        /// History CSV; defaults to OUT with a .history.csv extension.
        #[arg(long)]
        history: Option<PathBuf>,
    },
    /// Score a checkpoint on labeled matrices.
    Eval {
        checkpoint: PathBuf,
        data: PathBuf,
        /// Metrics JSON; stdout when absent.
        #[arg(short, long)]
        out: Option<PathBuf>,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Class and probabilities per record.
    Predict {
        checkpoint: PathBuf,
        data: PathBuf,
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Per-flow featurize and inference latency.
    Bench {
        pcap: PathBuf,
        /// Trained checkpoint; a freshly initialized model of the configured variant otherwise.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Flows to time (all when absent).
        #[arg(long)]
        limit: Option<usize>,
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
}

impl Settings {
    /// Defaults, then embedded artifact config, then `--config`, then flags.
    fn resolve(&self, embedded: Option<&str>) -> Result<RunConfig> {
        let mut cfg = match embedded {
            Some(meta) => RunConfig::from_metadata(meta).map_err(|e| anyhow!("embedded config: {e}"))?,
            None => RunConfig::default(),
        };
        if let Some(path) = &self.config {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let kv = text.parse().map_err(|e| anyhow!("{}: {e}", path.display()))?;
            cfg.apply(&kv).map_err(|e| anyhow!("{}: {e}", path.display()))?;
        }
        macro_rules! over {
            ($($f:ident),*) => { $( if let Some(v) = self.$f { cfg.$f = v; } )* };
        }
        over!(ctx_bucket, ctx_window_ms, flow_timeout_ms, max_packets, max_bytes, variant, epochs, batch_size, lr);
        if let Some(c) = self.classes {
            cfg.classes = match c {
                Classes::Binary => ClassMode::Binary,
                Classes::Multi => ClassMode::Multi,
            };
        }
        cfg.matrix().validate()?;
        Ok(cfg)
    }
}

fn read_didm(path: &Path) -> Result<MatrixFile> {
    dataset::read_matrices(path).with_context(|| format!("reading {}", path.display()))
}

fn write_didm(path: &Path, file: &MatrixFile) -> Result<()> {
    dataset::write_matrices(path, file).with_context(|| format!("writing {}", path.display()))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => write_text(p, text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn load_checkpoint(path: &Path) -> Result<(Checkpoint, RunConfig)> {
    let ck = Checkpoint::load(path).with_context(|| format!("reading {}", path.display()))?;
    let cfg = RunConfig::from_metadata(&ck.metadata).map_err(|e| anyhow!("{}: embedded config: {e}", path.display()))?;
    Ok((ck, cfg))
}

/// Refuses matrices built with settings other than the model's.
fn check_compatible(ck_cfg: &RunConfig, data: &MatrixFile, data_path: &Path) -> Result<()> {
    let shape = (data.max_packets as usize, data.max_bytes as usize);
    if shape != (ck_cfg.max_packets, ck_cfg.max_bytes) {
        bail!(
            "{}: matrices have P={} B={}, the checkpoint was trained on P={} B={}",
            data_path.display(),
            shape.0,
            shape.1,
            ck_cfg.max_packets,
            ck_cfg.max_bytes
        );
    }
    if let Some(meta) = &data.metadata {
        let data_cfg = RunConfig::from_metadata(meta).map_err(|e| anyhow!("{}: embedded config: {e}", data_path.display()))?;
        if data_cfg.matrix_signature() != ck_cfg.matrix_signature() {
            bail!(
                "{}: matrix config (P, B, ctx_bucket, flow_timeout_ms) = {:?} differs from the checkpoint's {:?}",
                data_path.display(),
                data_cfg.matrix_signature(),
                ck_cfg.matrix_signature()
            );
        }
    }
    Ok(())
}

fn sibling_val(train: &Path) -> Result<PathBuf> {
    let name = train.file_name().and_then(|n| n.to_str()).unwrap_or_default();
    if !name.contains(".train.") {
        bail!("no --val given and {} is not named *.train.*", train.display());
    }
    Ok(train.with_file_name(name.replacen(".train.", ".val.", 1)))
}

#[derive(Serialize)]
struct FlowLine {
    id: String,
    packets: usize,
    termination: &'static str,
    start_us: u64,
    end_us: u64,
}

#[derive(Serialize)]
struct ExtractSummary {
    records: u64,
    decoded: u64,
    skipped: std::collections::BTreeMap<&'static str, u64>,
    flows: usize,
    tcp_flows: usize,
    udp_flows: usize,
    terminations: std::collections::BTreeMap<&'static str, usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    flow_list: Option<Vec<FlowLine>>,
}

#[derive(Serialize)]
struct Latency {
    mean_ms: f64,
    median_ms: f64,
}

impl Latency {
    fn of(mut samples: Vec<f64>) -> Latency {
        if samples.is_empty() {
            return Latency { mean_ms: 0.0, median_ms: 0.0 };
        }
        samples.sort_by(f64::total_cmp);
        let n = samples.len();
        let median = if n % 2 == 1 {
            samples[n / 2]
        } else {
            (samples[n / 2 - 1] + samples[n / 2]) / 2.0
        };
        Latency {
            mean_ms: samples.iter().sum::<f64>() / n as f64,
            median_ms: median,
        }
    }
}

#[derive(Serialize)]
struct BenchReport {
    flows: usize,
    variant: String,
    max_packets: usize,
    max_bytes: usize,
    /// Capture read, decode and flow assembly, averaged over flows.
    extract_ms_per_flow: f64,
    featurize: Latency,
    infer: Latency,
    /// Published reference for per-flow inference; for comparison only.
    reference_infer_ms: f64,
}

fn run(cli: Cli) -> Result<()> {
    let s = &cli.settings;
    match cli.command {
        Command::Synth {
            seed,
            benign,
            attack,
            profile,
            disjoint_ips,
            out,
            manifest,
            summary,
        } => {
            let mut sc = match profile {
                Profile::Pattern => ScenarioConfig::pattern(benign, attack),
                Profile::Flood => ScenarioConfig::flood(benign, attack),
                Profile::Scan => ScenarioConfig::scan(benign, attack),
            };
            sc.seed = seed;
            sc.disjoint_ips = disjoint_ips;
            let scenario = synth::generate(&sc);
            fs::write(&out, &scenario.pcap).with_context(|| format!("writing {}", out.display()))?;
            write_text(&manifest, &scenario.manifest.to_string())?;
            let json = serde_json::to_string_pretty(&scenario.summary)? + "\n";
            emit(summary.as_deref(), &json)?;
        }
        Command::Extract { pcap, flows, out } => {
            let cfg = s.resolve(None)?;
            let ex = pipeline::extract(&pcap, &cfg).with_context(|| format!("reading {}", pcap.display()))?;
            let mut terminations = std::collections::BTreeMap::new();
            for f in &ex.flows {
                *terminations.entry(f.termination.as_str()).or_insert(0) += 1;
            }
            let tcp = ex.flows.iter().filter(|f| f.key.protocol == did::pcap::Transport::Tcp).count();
            let summary = ExtractSummary {
                records: ex.records,
                decoded: ex.decoded,
                skipped: ex.skipped.iter().map(|(r, n)| (r.name(), n)).collect(),
                flows: ex.flows.len(),
                tcp_flows: tcp,
                udp_flows: ex.flows.len() - tcp,
                terminations,
                flow_list: flows.then(|| {
                    ex.flows
                        .iter()
                        .map(|f| FlowLine {
                            id: f.flow_id(),
                            packets: f.packets.len(),
                            termination: f.termination.as_str(),
                            start_us: f.start_time_us,
                            end_us: f.end_time_us,
                        })
                        .collect()
                }),
            };
            emit(out.as_deref(), &(serde_json::to_string_pretty(&summary)? + "\n"))?;
        }
        Command::Featurize {
            pcap,
            labels,
            zero_context,
            out,
        } => {
            let cfg = s.resolve(None)?;
            let manifest = labels
                .as_ref()
                .map(|p| LabelManifest::load(p).with_context(|| format!("reading {}", p.display())))
                .transpose()?;
            let ex = pipeline::extract(&pcap, &cfg).with_context(|| format!("reading {}", pcap.display()))?;
            let matrices = pipeline::featurize(&ex.flows, manifest.as_ref(), &cfg, zero_context)?;
            log::info!("{} records, {} flows", ex.records, matrices.len());
            write_didm(&out, &pipeline::matrix_file(matrices, &cfg))?;
        }
        Command::Balance { input, seed, out } => {
            let file = read_didm(&input)?;
            let cfg = s.resolve(file.metadata.as_deref())?;
            let keep = dataset::balance(&file.labels(), cfg.balance_mode(), seed)?;
            log::info!("kept {} of {} records", keep.len(), file.records.len());
            write_didm(&out, &file.subset(&keep))?;
        }
        Command::Split { input, seed, out, kfold } => {
            let file = read_didm(&input)?;
            let cfg = s.resolve(file.metadata.as_deref())?;
            let prefix = out.to_string_lossy().into_owned();
            let labels = file.labels();
            if let Some(k) = kfold {
                let folds = dataset::kfold(&labels, k, seed)?;
                let mut text = String::new();
                for (i, f) in folds.iter().enumerate() {
                    let _ = writeln!(text, "{i} {f}");
                }
                write_text(Path::new(&format!("{prefix}.folds.txt")), &text)?;
            } else {
                let assignment = dataset::split(&labels, cfg.split, seed)?;
                for part in [Split::Train, Split::Val, Split::Test] {
                    let idx: Vec<usize> = (0..assignment.len()).filter(|&i| assignment[i] == part).collect();
                    write_didm(Path::new(&format!("{prefix}.{}.didm", part.as_str())), &file.subset(&idx))?;
                }
                write_text(Path::new(&format!("{prefix}.split.txt")), &dataset::split_manifest(&assignment))?;
            }
        }
        Command::Train {
            train,
            val,
            seed,
            out,
            history,
        } => {
            let val = match val {
                Some(v) => v,
                None => sibling_val(&train)?,
            };
            let train_file = read_didm(&train)?;
            let val_file = read_didm(&val)?;
            let mut cfg = s.resolve(train_file.metadata.as_deref())?;
            cfg.seed = seed;
            cfg.max_packets = train_file.max_packets as usize;
            cfg.max_bytes = train_file.max_bytes as usize;
            let outcome = pipeline::train_model(&train_file, &val_file, &cfg)?;
            log::info!("best epoch {} after {} steps", outcome.best_epoch, outcome.steps);
            outcome.best.save(&out).with_context(|| format!("writing {}", out.display()))?;
            let history = history.unwrap_or_else(|| out.with_extension("history.csv"));
            write_text(&history, &outcome.history.to_csv())?;
        }
        Command::Eval {
            checkpoint,
            data,
            out,
            csv,
        } => {
            let (ck, ck_cfg) = load_checkpoint(&checkpoint)?;
            let file = read_didm(&data)?;
            check_compatible(&ck_cfg, &file, &data)?;
            let cm = pipeline::evaluate(&ck.model, &file)?;
            let report = multiclass_report(&cm, ck_cfg.class_names());
            emit(out.as_deref(), &(report.to_json() + "\n"))?;
            if let Some(p) = csv {
                write_text(&p, &report.to_csv())?;
            }
        }
        Command::Predict { checkpoint, data, out } => {
            let (ck, ck_cfg) = load_checkpoint(&checkpoint)?;
            let file = read_didm(&data)?;
            check_compatible(&ck_cfg, &file, &data)?;
            let names = ck_cfg.class_names();
            let mut text = String::from("flow_id\tclass\tname\tprobabilities\n");
            for r in &file.records {
                let probs = ck.model.predict(&r.values)?;
                let class = did::nn::argmax(&probs);
                let probs: Vec<String> = probs.iter().map(|p| format!("{p:.6}")).collect();
                let name = names.get(class).copied().unwrap_or("?");
                let _ = writeln!(text, "{}\t{class}\t{name}\t{}", r.flow_id, probs.join(","));
            }
            emit(out.as_deref(), &text)?;
        }
        Command::Bench {
            pcap,
            checkpoint,
            limit,
            out,
        } => {
            let (model, cfg) = match &checkpoint {
                Some(p) => {
                    let (ck, cfg) = load_checkpoint(p)?;
                    (ck.model, cfg)
                }
                None => {
                    let cfg = s.resolve(None)?;
                    (Model::new(cfg.model())?, cfg)
                }
            };
            let t0 = Instant::now();
            let ex = pipeline::extract(&pcap, &cfg).with_context(|| format!("reading {}", pcap.display()))?;
            let extract_ms = t0.elapsed().as_secs_f64() * 1e3;
            let n = limit.unwrap_or(ex.flows.len()).min(ex.flows.len());
            let mcfg = cfg.matrix();
            let mut tracker = ContextTracker::new(cfg.context());
            let (mut feat, mut infer) = (Vec::with_capacity(n), Vec::with_capacity(n));
            for flow in &ex.flows[..n] {
                let t = Instant::now();
                let ctx = tracker.observe_flow(flow.initiator.ip, flow.responder().ip, flow.start_time_us)?;
                let m = build_matrix(flow, &ctx, &mcfg)?;
                feat.push(t.elapsed().as_secs_f64() * 1e3);
                let t = Instant::now();
                std::hint::black_box(model.predict(&m.values)?);
                infer.push(t.elapsed().as_secs_f64() * 1e3);
            }
            let report = BenchReport {
                flows: n,
                variant: cfg.variant.to_string(),
                max_packets: cfg.max_packets,
                max_bytes: cfg.max_bytes,
                extract_ms_per_flow: if ex.flows.is_empty() { 0.0 } else { extract_ms / ex.flows.len() as f64 },
                featurize: Latency::of(feat),
                infer: Latency::of(infer),
                reference_infer_ms: 7.0,
            };
            emit(out.as_deref(), &(serde_json::to_string_pretty(&report)? + "\n"))?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    // clap exits with status 2 on usage errors.
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
