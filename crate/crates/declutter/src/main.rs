//! declutter: decompose predicate-argument tuple sets into sentence-sized
//! clusters for compositional data-to-text generation.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::Rng;
use serde::Serialize;

use declutter::align::{self, align_tuples, text_tokens, SilverAlignment};
use declutter::corpus::{load_corpus, save_corpus, Corpus};
use declutter::decompose::{self, Decomposition};
use declutter::error::{DataError, NumericError};
use declutter::metrics::{bleu_corpus, faithfulness, nmi, FaithfulnessConfig};
use declutter::realize::{
    ExternalRealizer, ExternalWithFallback, Realizer, TemplateRealizer,
};
use declutter::rl::{self, RLConfig, SurrogateReward};
use declutter::scorer::{
    self, load_params, make_training_pairs, save_params, ScorerConfig, ScorerParams,
    TrainConfig, Vocab,
};
use declutter::splits::{salted_rng, sha256_file, SplitKind, SplitMetadata, SplitSpec};
use declutter::weights::{count_stats, GammaMatrix, NumericalSource, PairStats, WeightSource};

#[derive(Parser)]
#[command(name = "declutter", version, about, disable_help_subcommand = true)]
struct Cli {
    /// TOML config file; keys mirror the flags, sectioned per subcommand.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; every stage derives a named sub-seed from it.
    /// Falls back to the DECLUTTER_SEED environment variable, then 0.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Record-level parallelism where supported (default 1 for bit-exact
    /// baselines).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum KindArg {
    Full,
    Oneshot,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SourceArg {
    Numerical,
    Neural,
    Rl,
}

#[derive(Args)]
struct ScorerDims {
    #[arg(long)]
    d_model: Option<usize>,
    #[arg(long)]
    d_ff: Option<usize>,
    #[arg(long)]
    heads: Option<usize>,
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    dropout: Option<f64>,
    #[arg(long)]
    max_seq: Option<usize>,
    /// Use the reduced-size preset instead of the full-size defaults.
    #[arg(long)]
    small: bool,
}

impl ScorerDims {
    fn resolve(&self, conf: &Conf) -> ScorerConfig {
        let mut cfg = if self.small || conf.get_bool("small").unwrap_or(false) {
            ScorerConfig::small()
        } else {
            ScorerConfig::default()
        };
        cfg.d_model = self.d_model.or(conf.get_usize("d-model")).unwrap_or(cfg.d_model);
        cfg.d_ff = self.d_ff.or(conf.get_usize("d-ff")).unwrap_or(cfg.d_ff);
        cfg.heads = self.heads.or(conf.get_usize("heads")).unwrap_or(cfg.heads);
        cfg.layers = self.layers.or(conf.get_usize("layers")).unwrap_or(cfg.layers);
        cfg.dropout = self.dropout.or(conf.get_f64("dropout")).unwrap_or(cfg.dropout);
        cfg.max_seq = self.max_seq.or(conf.get_usize("max-seq")).unwrap_or(cfg.max_seq);
        cfg
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Build a CGFull-k or CGOneShot-k training split.
    Split {
        #[arg(long, value_enum)]
        kind: Option<KindArg>,
        #[arg(long)]
        k: Option<usize>,
        input: PathBuf,
        output: PathBuf,
    },
    /// Silver-align each tuple to its argmax-BLEU reference sentence.
    Align { input: PathBuf, output: PathBuf },
    /// Predicate pair statistics for the numerical gamma weights.
    Stats {
        /// Silver alignments JSONL; computed on the fly when omitted.
        #[arg(long)]
        alignments: Option<PathBuf>,
        input: PathBuf,
        output: PathBuf,
    },
    /// Supervised training of the transformer pair scorer.
    TrainScorer {
        #[arg(long)]
        alignments: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        learning_rate: Option<f64>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[command(flatten)]
        dims: ScorerDims,
        input: PathBuf,
        output: PathBuf,
    },
    /// REINFORCE fine-tuning of the pair scorer.
    TrainRl {
        #[arg(long)]
        alignments: Option<PathBuf>,
        /// Warm-start model (recommended). Omit with --cold-start to
        /// initialize fresh parameters.
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        cold_start: bool,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long)]
        learning_rate: Option<f64>,
        #[arg(long)]
        delta: Option<f64>,
        #[arg(long)]
        baseline_draws: Option<usize>,
        /// Diagnostics JSONL stream (default: OUTPUT.diagnostics.jsonl).
        #[arg(long)]
        diagnostics: Option<PathBuf>,
        #[command(flatten)]
        dims: ScorerDims,
        input: PathBuf,
        output: PathBuf,
    },
    /// Decompose each record into ordered tuple clusters.
    Decompose {
        #[arg(long, value_enum)]
        source: Option<SourceArg>,
        #[arg(long)]
        epsilon: Option<f64>,
        /// Pair statistics JSON (numerical source); computed when omitted.
        #[arg(long)]
        stats: Option<PathBuf>,
        /// Scorer model file (neural/rl sources).
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        alignments: Option<PathBuf>,
        input: PathBuf,
        output: PathBuf,
    },
    /// Realize decompositions into text.
    Generate {
        #[arg(long)]
        decomp: PathBuf,
        /// External realizer command line; the built-in template realizer
        /// is used when omitted.
        #[arg(long)]
        realizer_cmd: Option<String>,
        #[arg(long)]
        timeout_secs: Option<u64>,
        /// Fall back to the template realizer on external failures.
        #[arg(long)]
        fallback_template: bool,
        input: PathBuf,
        output: PathBuf,
    },
    /// BLEU / NMI / faithfulness-proxy report.
    Eval {
        #[arg(long)]
        decomp: PathBuf,
        #[arg(long)]
        gen: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        /// Report destination (stdout when omitted).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Validation sweep over the effective-cluster threshold epsilon.
    SweepEpsilon {
        #[arg(long)]
        alignments: Option<PathBuf>,
        /// start:end:step, inclusive of start, end by step.
        #[arg(long)]
        grid: Option<String>,
        input: PathBuf,
        output: PathBuf,
    },
    /// Built-in numerical self-tests (gradient, Hungarian, Taylor/Jensen,
    /// spectral planted-partition).
    Check,
}

enum CliError {
    Data(String),
    Numeric(String),
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<NumericError> for CliError {
    fn from(e: NumericError) -> Self {
        CliError::Numeric(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<declutter::realize::RealizeError> for CliError {
    fn from(e: declutter::realize::RealizeError) -> Self {
        CliError::Data(e.to_string())
    }
}

/// Config-file view for one subcommand: section keys shadow top-level keys.
struct Conf {
    top: toml::Table,
    section: Option<toml::Table>,
}

impl Conf {
    fn load(path: Option<&Path>, section: &str) -> Result<Self, CliError> {
        let top = match path {
            None => toml::Table::new(),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::Data(format!("{}: {e}", p.display())))?;
                text.parse::<toml::Table>()
                    .map_err(|e| CliError::Data(format!("{}: {e}", p.display())))?
            }
        };
        let section_tbl = top.get(section).and_then(|v| v.as_table()).cloned();
        Ok(Conf { top, section: section_tbl })
    }

    fn get(&self, key: &str) -> Option<&toml::Value> {
        self.section
            .as_ref()
            .and_then(|t| t.get(key))
            .or_else(|| self.top.get(key))
    }

    fn get_str(&self, key: &str) -> Option<String> {
        self.get(key).and_then(|v| v.as_str()).map(str::to_string)
    }

    fn get_f64(&self, key: &str) -> Option<f64> {
        self.get(key).and_then(|v| v.as_float().or_else(|| v.as_integer().map(|i| i as f64)))
    }

    fn get_u64(&self, key: &str) -> Option<u64> {
        self.get(key).and_then(|v| v.as_integer()).map(|i| i as u64)
    }

    fn get_usize(&self, key: &str) -> Option<usize> {
        self.get_u64(key).map(|v| v as usize)
    }

    fn get_bool(&self, key: &str) -> Option<bool> {
        self.get(key).and_then(|v| v.as_bool())
    }
}

#[derive(Serialize)]
struct RunManifest {
    subcommand: String,
    flags: BTreeMap<String, String>,
    seeds: BTreeMap<String, u64>,
    input_hashes: BTreeMap<String, String>,
    version: String,
    timestamp_unix: u64,
}

fn write_manifest(
    artifact: &Path,
    subcommand: &str,
    flags: BTreeMap<String, String>,
    seeds: BTreeMap<String, u64>,
    inputs: &[&Path],
) -> Result<(), CliError> {
    let mut input_hashes = BTreeMap::new();
    for p in inputs {
        input_hashes.insert(p.display().to_string(), sha256_file(p)?);
    }
    let manifest = RunManifest {
        subcommand: subcommand.to_string(),
        flags,
        seeds,
        input_hashes,
        version: env!("CARGO_PKG_VERSION").to_string(),
        timestamp_unix: std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0),
    };
    let path = manifest_path(artifact);
    std::fs::write(path, serde_json::to_string_pretty(&manifest).unwrap() + "\n")?;
    Ok(())
}

fn manifest_path(artifact: &Path) -> PathBuf {
    let mut s = artifact.as_os_str().to_os_string();
    s.push(".manifest.json");
    PathBuf::from(s)
}

fn sub_seed(master: u64, name: &str) -> u64 {
    salted_rng(master, name).gen()
}

fn resolve_seed(cli_seed: Option<u64>, conf: &Conf) -> u64 {
    cli_seed
        .or_else(|| conf.get_u64("seed"))
        .or_else(|| {
            std::env::var("DECLUTTER_SEED")
                .ok()
                .and_then(|s| s.parse().ok())
        })
        .unwrap_or(0)
}

fn load_or_compute_alignments(
    corpus: &Corpus,
    path: Option<&Path>,
) -> Result<HashMap<String, SilverAlignment>, CliError> {
    match path {
        Some(p) => Ok(align::load_alignments(p)?),
        None => Ok(corpus
            .records
            .iter()
            .map(|r| (r.id.clone(), align_tuples(r)))
            .collect()),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Data(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Numeric(msg)) => {
            eprintln!("numeric error: {msg}");
            ExitCode::from(3)
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.cmd {
        Cmd::Split { kind, k, input, output } => {
            let conf = Conf::load(cli.config.as_deref(), "split")?;
            let seed = resolve_seed(cli.seed, &conf);
            let kind = kind
                .or_else(|| match conf.get_str("kind").as_deref() {
                    Some("full") => Some(KindArg::Full),
                    Some("oneshot") => Some(KindArg::Oneshot),
                    _ => None,
                })
                .unwrap_or(KindArg::Full);
            let k = k.or_else(|| conf.get_usize("k")).unwrap_or(7);
            let split_seed = sub_seed(seed, "split");
            let spec = SplitSpec {
                kind: match kind {
                    KindArg::Full => SplitKind::Full,
                    KindArg::Oneshot => SplitKind::OneShot,
                },
                k,
                seed: split_seed,
            };
            let corpus = load_corpus(&input)?;
            let out_corpus = declutter::splits::build_split(&corpus, &spec);
            save_corpus(&out_corpus, &output)?;
            let meta = SplitMetadata {
                kind: spec.kind,
                k,
                seed: split_seed,
                input_sha256: sha256_file(&input)?,
                count: out_corpus.len(),
            };
            let meta_path = output.with_extension("meta.json");
            std::fs::write(&meta_path, serde_json::to_string_pretty(&meta).unwrap() + "\n")?;
            let flags = BTreeMap::from([
                ("kind".into(), format!("{:?}", spec.kind).to_lowercase()),
                ("k".into(), k.to_string()),
            ]);
            let seeds = BTreeMap::from([("master".into(), seed), ("split".into(), split_seed)]);
            write_manifest(&output, "split", flags, seeds, &[&input])?;
            println!("wrote {} records to {}", out_corpus.len(), output.display());
            Ok(())
        }
        Cmd::Align { input, output } => {
            let corpus = load_corpus(&input)?;
            let alignments: Vec<SilverAlignment> =
                corpus.records.iter().map(align_tuples).collect();
            align::save_alignments(&alignments, &output)?;
            write_manifest(&output, "align", BTreeMap::new(), BTreeMap::new(), &[&input])?;
            println!("aligned {} records", alignments.len());
            Ok(())
        }
        Cmd::Stats { alignments, input, output } => {
            let corpus = load_corpus(&input)?;
            let aligns = load_or_compute_alignments(&corpus, alignments.as_deref())?;
            let stats = count_stats(&corpus, &aligns)?;
            std::fs::write(&output, serde_json::to_string_pretty(&stats).unwrap() + "\n")?;
            let mut inputs: Vec<&Path> = vec![&input];
            if let Some(a) = &alignments {
                inputs.push(a);
            }
            write_manifest(&output, "stats", BTreeMap::new(), BTreeMap::new(), &inputs)?;
            println!(
                "{} predicates, {} joint pairs",
                stats.single.len(),
                stats.joint.len()
            );
            Ok(())
        }
        Cmd::TrainScorer {
            alignments,
            epochs,
            learning_rate,
            batch_size,
            dims,
            input,
            output,
        } => {
            let conf = Conf::load(cli.config.as_deref(), "train-scorer")?;
            let seed = resolve_seed(cli.seed, &conf);
            let corpus = load_corpus(&input)?;
            let aligns = load_or_compute_alignments(&corpus, alignments.as_deref())?;
            let train_seed = sub_seed(seed, "train");
            let pairs = make_training_pairs(&aligns, &corpus, train_seed)?;
            let hp = TrainConfig {
                learning_rate: learning_rate
                    .or(conf.get_f64("learning-rate"))
                    .unwrap_or(1e-3),
                batch_size: batch_size.or(conf.get_usize("batch-size")).unwrap_or(64),
                epochs: epochs.or(conf.get_usize("epochs")).unwrap_or(50),
                seed: train_seed,
                ..Default::default()
            };
            let cfg = dims.resolve(&conf);
            let (params, report) = scorer::train_scorer(&pairs, cfg, &hp)?;
            save_params(&params, &output)?;
            let flags = BTreeMap::from([
                ("epochs".into(), hp.epochs.to_string()),
                ("learning-rate".into(), hp.learning_rate.to_string()),
                ("batch-size".into(), hp.batch_size.to_string()),
                ("d-model".into(), params.cfg.d_model.to_string()),
                ("layers".into(), params.cfg.layers.to_string()),
            ]);
            let seeds = BTreeMap::from([("master".into(), seed), ("train".into(), train_seed)]);
            let mut inputs: Vec<&Path> = vec![&input];
            if let Some(a) = &alignments {
                inputs.push(a);
            }
            write_manifest(&output, "train-scorer", flags, seeds, &inputs)?;
            println!(
                "trained on {} pairs for {} epochs, final loss {:.4}",
                pairs.len(),
                report.epochs_run,
                report.loss_trace.last().copied().unwrap_or(f64::NAN)
            );
            Ok(())
        }
        Cmd::TrainRl {
            alignments,
            model,
            cold_start,
            epochs,
            samples,
            learning_rate,
            delta,
            baseline_draws,
            diagnostics,
            dims,
            input,
            output,
        } => {
            let conf = Conf::load(cli.config.as_deref(), "train-rl")?;
            let seed = resolve_seed(cli.seed, &conf);
            let corpus = load_corpus(&input)?;
            let aligns = load_or_compute_alignments(&corpus, alignments.as_deref())?;
            let rl_seed = sub_seed(seed, "rl");
            let mut params = match (&model, cold_start) {
                (Some(p), _) => load_params(p)?,
                (None, true) => {
                    let vocab = Vocab::build(
                        corpus
                            .records
                            .iter()
                            .flat_map(|r| r.tuples.iter().map(|t| t.predicate.as_str())),
                    );
                    ScorerParams::init(dims.resolve(&conf), vocab, rl_seed)?
                }
                (None, false) => {
                    return Err(CliError::Data(
                        "train-rl needs --model for a warm start (or --cold-start)".into(),
                    ))
                }
            };
            let cfg = RLConfig {
                samples_per_example: samples.or(conf.get_usize("samples")).unwrap_or(4),
                delta: delta.or(conf.get_f64("delta")).unwrap_or(1e-4),
                learning_rate: learning_rate
                    .or(conf.get_f64("learning-rate"))
                    .unwrap_or(1e-3),
                epochs: epochs.or(conf.get_usize("epochs")).unwrap_or(1),
                seed: rl_seed,
                baseline_draws: baseline_draws
                    .or(conf.get_usize("baseline-draws"))
                    .unwrap_or(1),
                ..Default::default()
            };
            let diag = rl::train_rl(&corpus, &aligns, &mut params, &cfg, &SurrogateReward)?;
            save_params(&params, &output)?;
            let diag_path = diagnostics.unwrap_or_else(|| {
                let mut s = output.as_os_str().to_os_string();
                s.push(".diagnostics.jsonl");
                PathBuf::from(s)
            });
            {
                use std::io::Write;
                let mut f = std::fs::File::create(&diag_path)?;
                for d in diag.iter().filter(|d| !d.skipped) {
                    writeln!(f, "{}", serde_json::to_string(d).unwrap())?;
                }
            }
            let flags = BTreeMap::from([
                ("epochs".into(), cfg.epochs.to_string()),
                ("samples".into(), cfg.samples_per_example.to_string()),
                ("learning-rate".into(), cfg.learning_rate.to_string()),
                ("delta".into(), cfg.delta.to_string()),
                ("cold-start".into(), cold_start.to_string()),
            ]);
            let seeds = BTreeMap::from([("master".into(), seed), ("rl".into(), rl_seed)]);
            let mut inputs: Vec<&Path> = vec![&input];
            if let Some(m) = &model {
                inputs.push(m);
            }
            write_manifest(&output, "train-rl", flags, seeds, &inputs)?;
            let steps = diag.iter().filter(|d| !d.skipped).count();
            let last = diag.iter().rev().find(|d| !d.skipped);
            println!(
                "{} RL steps, final mean reward {:.4}",
                steps,
                last.map(|d| d.mean_reward).unwrap_or(f64::NAN)
            );
            Ok(())
        }
        Cmd::Decompose { source, epsilon, stats, model, alignments, input, output } => {
            let conf = Conf::load(cli.config.as_deref(), "decompose")?;
            let seed = resolve_seed(cli.seed, &conf);
            let jobs = cli.jobs.or(conf.get_usize("jobs")).unwrap_or(1).max(1);
            let source = source
                .or_else(|| match conf.get_str("source").as_deref() {
                    Some("numerical") => Some(SourceArg::Numerical),
                    Some("neural") => Some(SourceArg::Neural),
                    Some("rl") => Some(SourceArg::Rl),
                    _ => None,
                })
                .unwrap_or(SourceArg::Numerical);
            let epsilon = epsilon.or(conf.get_f64("epsilon")).unwrap_or(0.15);
            let cluster_seed = sub_seed(seed, "cluster");
            let corpus = load_corpus(&input)?;
            let counts = align::first_sentence_counts(&corpus);

            let owned_stats: Option<PairStats> = match source {
                SourceArg::Numerical => Some(match &stats {
                    Some(p) => {
                        let text = std::fs::read_to_string(p)
                            .map_err(|e| CliError::Data(format!("{}: {e}", p.display())))?;
                        serde_json::from_str(&text)
                            .map_err(|e| CliError::Data(format!("{}: {e}", p.display())))?
                    }
                    None => {
                        let aligns =
                            load_or_compute_alignments(&corpus, alignments.as_deref())?;
                        count_stats(&corpus, &aligns)?
                    }
                }),
                _ => None,
            };
            let owned_model: Option<ScorerParams> = match source {
                SourceArg::Neural | SourceArg::Rl => {
                    let p = model.as_ref().ok_or_else(|| {
                        CliError::Data("neural/rl source needs --model".into())
                    })?;
                    Some(load_params(p)?)
                }
                SourceArg::Numerical => None,
            };
            let weight_source: Box<dyn WeightSource + Sync> = match source {
                SourceArg::Numerical => Box::new(NumericalSource {
                    stats: owned_stats.as_ref().unwrap(),
                }),
                _ => Box::new(declutter::scorer::NeuralSource {
                    params: owned_model.as_ref().unwrap(),
                }),
            };

            let decomps: Vec<Decomposition> = if jobs <= 1 {
                let mut out = Vec::with_capacity(corpus.len());
                for r in &corpus.records {
                    out.push(decompose::decompose(
                        r,
                        weight_source.as_ref(),
                        epsilon,
                        cluster_seed,
                        &counts,
                    )?);
                }
                out
            } else {
                let mut results: Vec<Option<Result<Decomposition, NumericError>>> =
                    (0..corpus.len()).map(|_| None).collect();
                let ws: &(dyn WeightSource + Sync) = weight_source.as_ref();
                std::thread::scope(|scope| {
                    for (chunk_idx, chunk) in results
                        .chunks_mut(corpus.len().div_ceil(jobs))
                        .enumerate()
                    {
                        let records = &corpus.records;
                        let counts = &counts;
                        let base = chunk_idx * corpus.len().div_ceil(jobs);
                        scope.spawn(move || {
                            for (off, slot) in chunk.iter_mut().enumerate() {
                                *slot = Some(decompose::decompose(
                                    &records[base + off],
                                    ws,
                                    epsilon,
                                    cluster_seed,
                                    counts,
                                ));
                            }
                        });
                    }
                });
                results
                    .into_iter()
                    .map(|r| r.unwrap())
                    .collect::<Result<_, _>>()?
            };
            decompose::save_decompositions(&decomps, &output)?;
            let flags = BTreeMap::from([
                ("source".into(), format!("{}", match source {
                    SourceArg::Numerical => "numerical",
                    SourceArg::Neural => "neural",
                    SourceArg::Rl => "rl",
                })),
                ("epsilon".into(), epsilon.to_string()),
                ("jobs".into(), jobs.to_string()),
            ]);
            let seeds = BTreeMap::from([("master".into(), seed), ("cluster".into(), cluster_seed)]);
            let mut inputs: Vec<&Path> = vec![&input];
            if let Some(p) = &stats {
                inputs.push(p);
            }
            if let Some(p) = &model {
                inputs.push(p);
            }
            write_manifest(&output, "decompose", flags, seeds, &inputs)?;
            println!("decomposed {} records", decomps.len());
            Ok(())
        }
        Cmd::Generate { decomp, realizer_cmd, timeout_secs, fallback_template, input, output } => {
            let conf = Conf::load(cli.config.as_deref(), "generate")?;
            let corpus = load_corpus(&input)?;
            let decomps = decompose::load_decompositions(&decomp)?;
            let realizer_cmd = realizer_cmd.or_else(|| conf.get_str("realizer-cmd"));
            let timeout = Duration::from_secs(
                timeout_secs.or(conf.get_u64("timeout-secs")).unwrap_or(30),
            );
            let mut realizer: Box<dyn Realizer> = match &realizer_cmd {
                None => Box::new(TemplateRealizer),
                Some(cmd) => {
                    let argv: Vec<String> =
                        cmd.split_whitespace().map(str::to_string).collect();
                    let ext = ExternalRealizer::spawn(&argv, timeout)?;
                    if fallback_template || conf.get_bool("fallback-template").unwrap_or(false)
                    {
                        Box::new(ExternalWithFallback {
                            external: ext,
                            fallback_to_template: true,
                        })
                    } else {
                        Box::new(ext)
                    }
                }
            };
            use std::io::Write;
            let mut f = std::fs::File::create(&output)?;
            let mut count = 0usize;
            for d in &decomps {
                let record = corpus.get(&d.id).ok_or_else(|| {
                    CliError::Data(format!("decomposition for unknown record {}", d.id))
                })?;
                let text = declutter::realize::generate(record, d, realizer.as_mut())?;
                writeln!(
                    f,
                    "{}",
                    serde_json::json!({ "id": d.id, "text": text })
                )?;
                count += 1;
            }
            drop(f);
            let flags = BTreeMap::from([
                (
                    "realizer".into(),
                    realizer_cmd.clone().unwrap_or_else(|| "template".into()),
                ),
                ("timeout-secs".into(), timeout.as_secs().to_string()),
            ]);
            write_manifest(&output, "generate", flags, BTreeMap::new(), &[&input, &decomp])?;
            println!("generated {count} texts");
            Ok(())
        }
        Cmd::Eval { decomp, gen, corpus, out } => {
            let corp = load_corpus(&corpus)?;
            let decomps = decompose::load_decompositions(&decomp)?;
            let gens: HashMap<String, String> = {
                use std::io::BufRead;
                let f = std::fs::File::open(&gen)
                    .map_err(|e| CliError::Data(format!("{}: {e}", gen.display())))?;
                let mut map = HashMap::new();
                for line in std::io::BufReader::new(f).lines() {
                    let line = line?;
                    if line.trim().is_empty() {
                        continue;
                    }
                    let v: serde_json::Value = serde_json::from_str(&line)
                        .map_err(|e| CliError::Data(e.to_string()))?;
                    let id = v["id"].as_str().unwrap_or_default().to_string();
                    let text = v["text"].as_str().unwrap_or_default().to_string();
                    map.insert(id, text);
                }
                map
            };
            let mut hyps: Vec<Vec<String>> = Vec::new();
            let mut refs: Vec<Vec<Vec<String>>> = Vec::new();
            let mut nmis: Vec<f64> = Vec::new();
            let mut ok_count = 0usize;
            let mut faith_total = 0usize;
            let mut extraneous_sum = 0.0;
            for d in &decomps {
                let record = corp.get(&d.id).ok_or_else(|| {
                    CliError::Data(format!("decomposition for unknown record {}", d.id))
                })?;
                let silver = align_tuples(record);
                let labels = d.labels(record.tuples.len());
                nmis.push(nmi(&labels, &silver.assignment)?);
                if let Some(text) = gens.get(&d.id) {
                    hyps.push(text_tokens(text));
                    refs.push(
                        record
                            .references
                            .iter()
                            .map(|r| text_tokens(&r.text))
                            .collect(),
                    );
                    let report = faithfulness(record, text, FaithfulnessConfig::default());
                    faith_total += 1;
                    extraneous_sum += report.extraneous_token_ratio;
                    if report.ok {
                        ok_count += 1;
                    }
                }
            }
            let bleu = if hyps.is_empty() {
                0.0
            } else {
                bleu_corpus(&hyps, &refs)?
            };
            let mean_nmi = if nmis.is_empty() {
                0.0
            } else {
                nmis.iter().sum::<f64>() / nmis.len() as f64
            };
            let report = serde_json::json!({
                "records": decomps.len(),
                "bleu": bleu,
                "mean_nmi_vs_silver": mean_nmi,
                "faithfulness_ok_rate": if faith_total == 0 { 0.0 } else {
                    ok_count as f64 / faith_total as f64
                },
                "mean_extraneous_ratio": if faith_total == 0 { 0.0 } else {
                    extraneous_sum / faith_total as f64
                },
            });
            let text = serde_json::to_string_pretty(&report).unwrap() + "\n";
            match out {
                None => print!("{text}"),
                Some(p) => {
                    std::fs::write(&p, &text)?;
                    write_manifest(
                        &p,
                        "eval",
                        BTreeMap::new(),
                        BTreeMap::new(),
                        &[&corpus, &decomp, &gen],
                    )?;
                }
            }
            Ok(())
        }
        Cmd::SweepEpsilon { alignments, grid, input, output } => {
            let conf = Conf::load(cli.config.as_deref(), "sweep-epsilon")?;
            let seed = resolve_seed(cli.seed, &conf);
            let cluster_seed = sub_seed(seed, "cluster");
            let grid = grid
                .or_else(|| conf.get_str("grid"))
                .unwrap_or_else(|| "0.05:0.45:0.05".into());
            let parts: Vec<f64> = grid
                .split(':')
                .map(|s| s.parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|e| CliError::Data(format!("bad --grid {grid}: {e}")))?;
            let [start, end, step] = parts.as_slice() else {
                return Err(CliError::Data(format!("bad --grid {grid}: want start:end:step")));
            };
            if *step <= 0.0 {
                return Err(CliError::Data("grid step must be positive".into()));
            }
            let corpus = load_corpus(&input)?;
            let aligns = load_or_compute_alignments(&corpus, alignments.as_deref())?;
            let stats = count_stats(&corpus, &aligns)?;
            let source = NumericalSource { stats: &stats };
            let counts = align::first_sentence_counts(&corpus);
            let mut rows = Vec::new();
            let mut best: Option<(f64, f64)> = None;
            let mut eps = *start;
            while eps <= end + 1e-12 {
                let mut nmis = Vec::new();
                for r in &corpus.records {
                    if r.tuples.len() < 2 {
                        continue;
                    }
                    let d = decompose::decompose(r, &source, eps, cluster_seed, &counts)?;
                    let silver = aligns
                        .get(&r.id)
                        .map(|a| a.assignment.clone())
                        .unwrap_or_else(|| align_tuples(r).assignment);
                    nmis.push(nmi(&d.labels(r.tuples.len()), &silver)?);
                }
                let mean = if nmis.is_empty() {
                    0.0
                } else {
                    nmis.iter().sum::<f64>() / nmis.len() as f64
                };
                rows.push(serde_json::json!({ "epsilon": eps, "mean_nmi": mean }));
                if best.map_or(true, |(_, b)| mean > b) {
                    best = Some((eps, mean));
                }
                eps += step;
            }
            let (best_eps, best_nmi) = best.unwrap_or((*start, 0.0));
            let report = serde_json::json!({
                "grid": rows,
                "best_epsilon": best_eps,
                "best_mean_nmi": best_nmi,
            });
            std::fs::write(&output, serde_json::to_string_pretty(&report).unwrap() + "\n")?;
            let flags = BTreeMap::from([("grid".into(), grid)]);
            let seeds = BTreeMap::from([("master".into(), seed), ("cluster".into(), cluster_seed)]);
            write_manifest(&output, "sweep-epsilon", flags, seeds, &[&input])?;
            println!("best epsilon {best_eps} (mean NMI {best_nmi:.4})");
            Ok(())
        }
        Cmd::Check => run_check(),
    }
}

fn permutations(m: usize) -> Vec<Vec<usize>> {
    if m == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for rest in permutations(m - 1) {
        for pos in 0..=rest.len() {
            let mut p = rest.clone();
            p.insert(pos, m - 1);
            out.push(p);
        }
    }
    out
}

fn run_check() -> Result<(), CliError> {
    let mut all_ok = true;
    let mut report = |name: &str, ok: bool, detail: String| {
        println!("{} {name}: {detail}", if ok { "PASS" } else { "FAIL" });
        all_ok &= ok;
    };

    // Hungarian vs exhaustive permutation minimum
    {
        let mut rng = salted_rng(1, "check-hungarian");
        let mut worst = 0.0f64;
        let mut ok = true;
        for _ in 0..200 {
            let m = rng.gen_range(1..=5usize);
            let cost: Vec<Vec<f64>> = (0..m)
                .map(|_| (0..m).map(|_| rng.gen_range(-10.0..10.0)).collect())
                .collect();
            let (_, total) = align::hungarian_assign(&cost)?;
            let brute = permutations(m)
                .into_iter()
                .map(|p| (0..m).map(|i| cost[i][p[i]]).sum::<f64>())
                .fold(f64::INFINITY, f64::min);
            worst = worst.max((total - brute).abs());
            ok &= (total - brute).abs() < 1e-9;
        }
        report("hungarian-oracle", ok, format!("max |gap| {worst:.2e} over 200 matrices"));
    }

    // scorer gradient check
    {
        let vocab = Vocab::build(["alpha beta", "gamma delta", "epsilon"].into_iter());
        let params = ScorerParams::init(ScorerConfig::small(), vocab, 5)?;
        let batch: Vec<(scorer::EncodedPair, f64)> = [
            ("alpha", "gamma", 1.0),
            ("beta", "epsilon", 0.0),
            ("delta", "alpha", 1.0),
        ]
        .iter()
        .map(|(a, b, l)| {
            (scorer::encode_pair(a, b, &params.vocab, params.cfg.max_seq), *l)
        })
        .collect();
        let err = scorer::grad_check(&params, &batch, 1e-5, 200, 3)?;
        report("gradient-check", err < 1e-4, format!("max relative error {err:.2e}"));
    }

    // Taylor exactness and Jensen gap
    {
        let mut rng = salted_rng(2, "check-taylor");
        let mut ok = true;
        let mut worst = 0.0f64;
        for n in 2..=4usize {
            let mut g = GammaMatrix::zeros(n);
            for i in 0..n {
                for j in i + 1..n {
                    g.set_pair(i, j, rng.gen::<f64>());
                }
            }
            let np = n * (n - 1) / 2;
            let b: Vec<f64> = (0..np).map(|_| rng.gen::<f64>()).collect();
            let r = rl::taylor_jensen_check(&g, 1.0, &b, 2000, &mut rng)?;
            worst = worst.max(r.linear_gap);
            ok &= r.ok;
        }
        report("taylor-jensen", ok, format!("max linear gap {worst:.2e}"));
    }

    // spectral planted partitions
    {
        let mut rng = salted_rng(3, "check-spectral");
        let mut hits = 0usize;
        let mut residual_ok = true;
        let trials = 50usize;
        for t in 0..trials {
            let blocks: Vec<usize> = if t % 2 == 0 { vec![3, 3] } else { vec![2, 2, 3] };
            let n: usize = blocks.iter().sum();
            let mut block_of = Vec::new();
            for (b, &s) in blocks.iter().enumerate() {
                block_of.extend(std::iter::repeat(b).take(s));
            }
            let mut g = GammaMatrix::zeros(n);
            for i in 0..n {
                for j in i + 1..n {
                    g.set_pair(i, j, if block_of[i] == block_of[j] { 0.9 } else { 0.05 });
                }
            }
            let c = declutter::spectral::spectral_cluster(&g, blocks.len(), rng.gen())?;
            if nmi(&c.labels, &block_of)? == 1.0 {
                hits += 1;
            }
            let l = declutter::spectral::normalized_laplacian(&g.rows)?;
            let (vals, vecs) = declutter::spectral::jacobi_eigen(&l)?;
            for (k, &lambda) in vals.iter().enumerate() {
                let mut res = 0.0f64;
                for i in 0..n {
                    let mut lv = 0.0;
                    for j in 0..n {
                        lv += l[i][j] * vecs[j][k];
                    }
                    res += (lv - lambda * vecs[i][k]).powi(2);
                }
                residual_ok &= res.sqrt() <= 1e-8;
            }
        }
        let ok = hits == trials && residual_ok;
        report(
            "spectral-planted",
            ok,
            format!("{hits}/{trials} exact recoveries, residuals ≤ 1e-8: {residual_ok}"),
        );
    }

    if all_ok {
        Ok(())
    } else {
        Err(CliError::Numeric("one or more self-tests failed".into()))
    }
}
