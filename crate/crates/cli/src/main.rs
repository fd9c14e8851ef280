//! `knowtune` — single entry-point binary for the knowledge-grounded QA
//! pipeline: KB building, retrieval queries, dataset generation, inference,
//! and evaluation.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 backend error.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use sha2::{Digest, Sha256};

use knowtune_core::datagen::{
    self, SplitSpec, DEFAULT_FEW_SHOT_SIZES, DEFAULT_UNSEEN_FRACTIONS,
};
use knowtune_core::evalkit::{
    self, H2GroupBy, JudgeVerdict, MetricReport, RatingSet,
};
use knowtune_core::gateway::{BackendDescriptor, GenerationBackend, Locale, PromptTemplates};
use knowtune_core::kb::KnowledgeBase;
use knowtune_core::orchestrator::{self, infer_batch, InferOptions};
use knowtune_core::retrieval::{Bm25Index, EmbeddingIndex, DEFAULT_B, DEFAULT_DIM, DEFAULT_K1};
use knowtune_core::Error;

#[derive(Parser)]
#[command(name = "knowtune", version, about = "Knowledge-grounded QA pipeline")]
struct Cli {
    /// Suppress informational messages on stderr
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Knowledge base operations
    #[command(subcommand)]
    Kb(KbCmd),
    /// Retrieval baselines over the knowledge base
    #[command(subcommand)]
    Retrieve(RetrieveCmd),
    /// Knowledge-guided dataset construction
    #[command(subcommand)]
    Datagen(DatagenCmd),
    /// Grounded inference (single query or batch file)
    Infer(InferArgs),
    /// Evaluation metrics and reports
    #[command(subcommand)]
    Eval(EvalCmd),
}

#[derive(Subcommand)]
enum KbCmd {
    /// Validate a KB file and write a canonical JSONL snapshot
    Build {
        /// Input KB (JSONL or CSV; format detected by extension)
        #[arg(long = "in")]
        input: PathBuf,
        /// Output snapshot path
        #[arg(long)]
        out: PathBuf,
    },
    /// Look up the content for an (entity, attribute) pair
    Lookup {
        #[arg(long)]
        kb: PathBuf,
        #[arg(long)]
        entity: String,
        #[arg(long)]
        attribute: String,
        /// Apply fuzzy attribute resolution before the lookup
        #[arg(long)]
        fuzzy: bool,
    },
}

#[derive(Subcommand)]
enum RetrieveCmd {
    /// Okapi BM25 ranking
    Bm25 {
        #[arg(long)]
        kb: PathBuf,
        #[arg(long)]
        query: String,
        #[arg(long, default_value_t = 10)]
        k: usize,
        #[arg(long, default_value_t = DEFAULT_K1)]
        k1: f64,
        #[arg(long, default_value_t = DEFAULT_B)]
        b: f64,
        /// Persist the built index to this path
        #[arg(long)]
        save_index: Option<PathBuf>,
    },
    /// Dense hashed-bigram cosine ranking
    Dense {
        #[arg(long)]
        kb: PathBuf,
        #[arg(long)]
        query: String,
        #[arg(long, default_value_t = 10)]
        k: usize,
        #[arg(long, default_value_t = DEFAULT_DIM)]
        dim: usize,
        #[arg(long)]
        save_index: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum DatagenCmd {
    /// Generate QA instances from every KB triple via the backend
    Generate {
        #[arg(long)]
        kb: PathBuf,
        #[command(flatten)]
        backend: BackendArgs,
        #[command(flatten)]
        templates: TemplateArgs,
        #[arg(long)]
        out: PathBuf,
        /// QA pairs to request per triple
        #[arg(long, default_value_t = 1)]
        repeat: usize,
    },
    /// Shuffle and split a dataset into train/valid/test
    Split {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, default_value_t = 2024)]
        seed: u64,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Emit the four training records per instance
    Emit {
        #[arg(long = "in")]
        input: PathBuf,
        #[command(flatten)]
        templates: TemplateArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Nested few-shot training subsets
    Fewshot {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, default_value_t = 2024)]
        seed: u64,
        #[arg(long, value_delimiter = ',')]
        sizes: Vec<usize>,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Unseen-entity training splits
    Unseen {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, default_value_t = 2024)]
        seed: u64,
        #[arg(long, value_delimiter = ',')]
        fractions: Vec<f64>,
        #[arg(long)]
        out_dir: PathBuf,
    },
}

#[derive(Args)]
struct InferArgs {
    #[arg(long)]
    kb: PathBuf,
    #[command(flatten)]
    backend: BackendArgs,
    #[command(flatten)]
    templates: TemplateArgs,
    /// Single query (mutually exclusive with --batch)
    #[arg(long, conflicts_with = "batch")]
    query: Option<String>,
    /// File with one query per line
    #[arg(long)]
    batch: Option<PathBuf>,
    #[arg(long, default_value_t = 4)]
    concurrency: usize,
    /// Write batch outcomes here (JSONL); defaults to stdout
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum EvalCmd {
    /// Entity accuracy between two line-aligned label files
    Entity {
        #[arg(long)]
        preds: PathBuf,
        #[arg(long)]
        golds: PathBuf,
        /// Require byte-exact matches instead of normalized matches
        #[arg(long)]
        strict: bool,
    },
    /// Knowledge accuracy of batch outcomes against gold instances
    Knowledge {
        /// Batch outcomes JSONL produced by `infer`
        #[arg(long)]
        responses: PathBuf,
        /// Gold dataset JSONL, aligned by position
        #[arg(long)]
        golds: PathBuf,
    },
    /// Mean BLEU-1 over line-aligned candidate and reference files
    Bleu {
        #[arg(long)]
        candidates: PathBuf,
        #[arg(long)]
        references: PathBuf,
    },
    /// Cohen's kappa between two line-aligned label files
    Kappa {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
    },
    /// Aggregate human ratings (helpfulness / harmlessness)
    H2 {
        /// Ratings CSV: rater_id,item_id,helpfulness,harmlessness[,system]
        #[arg(long)]
        ratings: PathBuf,
        #[arg(long, value_parser = ["system", "grounded", "none"], default_value = "none")]
        group_by: String,
    },
    /// LLM-judge batch outcomes and report the mean score
    Judge {
        #[arg(long)]
        responses: PathBuf,
        #[command(flatten)]
        backend: BackendArgs,
        #[command(flatten)]
        templates: TemplateArgs,
        /// Write per-item verdicts here (JSONL)
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Assemble a metric report from key=value pairs
    Report {
        #[arg(long = "metric", value_parser = parse_f64_pair)]
        metrics: Vec<(String, f64)>,
        #[arg(long = "seed", value_parser = parse_u64_pair)]
        seeds: Vec<(String, u64)>,
        #[arg(long = "sample", value_parser = parse_usize_pair)]
        samples: Vec<(String, usize)>,
        #[arg(long)]
        backend_kind: Option<String>,
        #[arg(long)]
        note: Vec<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Backend selection, shared by every generation-dependent subcommand.
/// Credentials travel only through the named environment variable, never
/// through flags or manifests.
#[derive(Args)]
struct BackendArgs {
    #[arg(long, value_parser = ["http", "scripted", "replay"])]
    backend: String,
    /// Scripted backend: JSONL of {"prompt", "response"}
    #[arg(long)]
    script: Option<PathBuf>,
    /// Replay backend: cache JSONL written by a recording run
    #[arg(long)]
    cache: Option<PathBuf>,
    /// HTTP backend: chat-completions endpoint URL
    #[arg(long)]
    endpoint: Option<String>,
    #[arg(long)]
    model: Option<String>,
    /// Name of the env var holding the bearer token
    #[arg(long)]
    credential_env: Option<String>,
    #[arg(long, default_value_t = 4)]
    max_concurrency: usize,
    #[arg(long, default_value_t = 60)]
    requests_per_minute: u32,
    /// Record every generation into this cache for later replay
    #[arg(long)]
    record: Option<PathBuf>,
}

impl BackendArgs {
    fn descriptor(&self) -> Result<BackendDescriptor, Error> {
        let missing = |flag: &str| {
            Error::InvalidArgument(format!("--{flag} is required for backend {}", self.backend))
        };
        match self.backend.as_str() {
            "scripted" => Ok(BackendDescriptor::Scripted {
                script: self.script.clone().ok_or_else(|| missing("script"))?,
            }),
            "replay" => Ok(BackendDescriptor::Replay {
                cache: self.cache.clone().ok_or_else(|| missing("cache"))?,
            }),
            "http" => Ok(BackendDescriptor::Http {
                endpoint: self.endpoint.clone().ok_or_else(|| missing("endpoint"))?,
                model: self.model.clone().ok_or_else(|| missing("model"))?,
                credential_env: self
                    .credential_env
                    .clone()
                    .ok_or_else(|| missing("credential-env"))?,
                max_concurrency: Some(self.max_concurrency),
                requests_per_minute: Some(self.requests_per_minute),
            }),
            other => Err(Error::InvalidArgument(format!("unknown backend {other}"))),
        }
    }

    fn build(&self) -> Result<Box<dyn GenerationBackend>, Error> {
        self.descriptor()?.build(self.record.as_deref())
    }
}

#[derive(Args)]
struct TemplateArgs {
    /// Prompt templates JSON; defaults to the built-in set for --locale
    #[arg(long)]
    templates: Option<PathBuf>,
    #[arg(long, value_parser = ["en", "zh"], default_value = "en")]
    locale: String,
}

impl TemplateArgs {
    fn load(&self) -> Result<PromptTemplates, Error> {
        match &self.templates {
            Some(path) => PromptTemplates::load(path),
            None => Ok(PromptTemplates::for_locale(if self.locale == "zh" {
                Locale::Zh
            } else {
                Locale::En
            })),
        }
    }
}

fn parse_f64_pair(s: &str) -> Result<(String, f64), String> {
    let (k, v) = s.split_once('=').ok_or("expected key=value")?;
    Ok((k.to_string(), v.parse().map_err(|e| format!("{e}"))?))
}

fn parse_u64_pair(s: &str) -> Result<(String, u64), String> {
    let (k, v) = s.split_once('=').ok_or("expected key=value")?;
    Ok((k.to_string(), v.parse().map_err(|e| format!("{e}"))?))
}

fn parse_usize_pair(s: &str) -> Result<(String, usize), String> {
    let (k, v) = s.split_once('=').ok_or("expected key=value")?;
    Ok((k.to_string(), v.parse().map_err(|e| format!("{e}"))?))
}

/// Manifest written next to every artifact a subcommand produces. Two runs
/// with identical inputs produce identical manifests modulo `timestamp`.
#[derive(Serialize)]
struct Manifest {
    command: String,
    seed: Option<u64>,
    backend_kind: Option<String>,
    template_hash: Option<String>,
    input_hashes: BTreeMap<String, String>,
    version: String,
    timestamp: u64,
}

impl Manifest {
    fn new(command: &str) -> Self {
        Manifest {
            command: command.to_string(),
            seed: None,
            backend_kind: None,
            template_hash: None,
            input_hashes: BTreeMap::new(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            timestamp: std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
        }
    }

    fn hash_input(&mut self, path: &Path) -> Result<(), Error> {
        let mut file = File::open(path)?;
        let mut hasher = Sha256::new();
        std::io::copy(&mut file, &mut hasher)?;
        self.input_hashes.insert(
            path.display().to_string(),
            hex::encode(hasher.finalize()),
        );
        Ok(())
    }

    fn hash_templates(&mut self, templates: &PromptTemplates) -> Result<(), Error> {
        let json = serde_json::to_string(templates)?;
        self.template_hash = Some(hex::encode(Sha256::digest(json.as_bytes())));
        Ok(())
    }

    /// Write next to `artifact`: `<artifact>.manifest.json` for files, or
    /// `manifest.json` inside `artifact` when it is a directory.
    fn write_next_to(&self, artifact: &Path) -> Result<(), Error> {
        let path = if artifact.is_dir() {
            artifact.join("manifest.json")
        } else {
            let mut name = artifact.file_name().unwrap_or_default().to_os_string();
            name.push(".manifest.json");
            artifact.with_file_name(name)
        };
        let mut out = BufWriter::new(File::create(path)?);
        serde_json::to_writer_pretty(&mut out, self)?;
        out.write_all(b"\n")?;
        Ok(())
    }
}

fn read_lines(path: &Path) -> Result<Vec<String>, Error> {
    let mut text = String::new();
    File::open(path)?.read_to_string(&mut text)?;
    Ok(text.lines().map(str::to_string).collect())
}

fn print_json<T: Serialize>(value: &T) -> Result<(), Error> {
    let mut stdout = std::io::stdout().lock();
    serde_json::to_writer_pretty(&mut stdout, value)?;
    stdout.write_all(b"\n")?;
    Ok(())
}

fn info(quiet: bool, msg: &str) {
    if !quiet {
        eprintln!("{msg}");
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let code = if err.use_stderr() { 1 } else { 0 };
            let _ = err.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(if err.is_backend() { 3 } else { 2 })
        }
    }
}

fn run(cli: &Cli) -> Result<(), Error> {
    let quiet = cli.quiet;
    match &cli.command {
        Command::Kb(cmd) => run_kb(cmd, quiet),
        Command::Retrieve(cmd) => run_retrieve(cmd, quiet),
        Command::Datagen(cmd) => run_datagen(cmd, quiet),
        Command::Infer(args) => run_infer(args, quiet),
        Command::Eval(cmd) => run_eval(cmd, quiet),
    }
}

fn run_kb(cmd: &KbCmd, quiet: bool) -> Result<(), Error> {
    match cmd {
        KbCmd::Build { input, out } => {
            let kb = KnowledgeBase::load_auto(input)?;
            kb.to_jsonl(BufWriter::new(File::create(out)?))?;
            let mut manifest = Manifest::new("kb build");
            manifest.hash_input(input)?;
            manifest.write_next_to(out)?;
            info(quiet, &format!("built KB with {} instances", kb.len()));
            Ok(())
        }
        KbCmd::Lookup {
            kb,
            entity,
            attribute,
            fuzzy,
        } => {
            let kb = KnowledgeBase::load_auto(kb)?;
            let resolved = if *fuzzy {
                kb.resolve_attribute(entity, attribute)
            } else {
                Some(attribute.clone())
            };
            let content =
                resolved.as_deref().and_then(|attr| kb.lookup(entity, attr));
            print_json(&serde_json::json!({
                "entity": entity,
                "attribute": attribute,
                "resolved_attribute": resolved,
                "found": content.is_some(),
                "content": content,
            }))
        }
    }
}

fn run_retrieve(cmd: &RetrieveCmd, _quiet: bool) -> Result<(), Error> {
    match cmd {
        RetrieveCmd::Bm25 {
            kb,
            query,
            k,
            k1,
            b,
            save_index,
        } => {
            let kb = KnowledgeBase::load_auto(kb)?;
            let index = Bm25Index::build(&kb, *k1, *b)?;
            if let Some(path) = save_index {
                index.save(path)?;
            }
            let hits = index.retrieve(query, *k)?;
            print_hits(&kb, &hits)
        }
        RetrieveCmd::Dense {
            kb,
            query,
            k,
            dim,
            save_index,
        } => {
            let kb = KnowledgeBase::load_auto(kb)?;
            let index = EmbeddingIndex::build(&kb, *dim)?;
            if let Some(path) = save_index {
                index.save(path)?;
            }
            let hits = index.retrieve(query, *k)?;
            print_hits(&kb, &hits)
        }
    }
}

fn print_hits(kb: &KnowledgeBase, hits: &[knowtune_core::retrieval::Hit]) -> Result<(), Error> {
    let rows: Vec<_> = hits
        .iter()
        .map(|h| {
            let inst = kb.get(h.doc_id);
            serde_json::json!({
                "doc_id": h.doc_id,
                "score": h.score,
                "entity": inst.map(|i| i.entity.clone()),
                "attribute": inst.map(|i| i.attribute.clone()),
            })
        })
        .collect();
    print_json(&rows)
}

fn run_datagen(cmd: &DatagenCmd, quiet: bool) -> Result<(), Error> {
    match cmd {
        DatagenCmd::Generate {
            kb,
            backend,
            templates,
            out,
            repeat,
        } => {
            let kb_data = KnowledgeBase::load_auto(kb)?;
            let tmpl = templates.load()?;
            let built = backend.build()?;
            let (dataset, failures) =
                datagen::generate_dataset(built.as_ref(), &tmpl, &kb_data, *repeat)?;
            datagen::write_dataset_jsonl(&dataset, BufWriter::new(File::create(out)?))?;
            let mut manifest = Manifest::new("datagen generate");
            manifest.backend_kind = Some(built.kind().to_string());
            manifest.hash_input(kb)?;
            manifest.hash_templates(&tmpl)?;
            manifest.write_next_to(out)?;
            info(
                quiet,
                &format!("generated {} instances ({} failures)", dataset.len(), failures.len()),
            );
            Ok(())
        }
        DatagenCmd::Split { input, seed, out_dir } => {
            let dataset = datagen::read_dataset_jsonl(BufReader::new(File::open(input)?))?;
            let (train, valid, test) = datagen::split(&dataset, &SplitSpec::new(*seed))?;
            std::fs::create_dir_all(out_dir)?;
            for (name, part) in [("train", &train), ("valid", &valid), ("test", &test)] {
                let path = out_dir.join(format!("{name}.jsonl"));
                datagen::write_dataset_jsonl(part, BufWriter::new(File::create(path)?))?;
            }
            let mut manifest = Manifest::new("datagen split");
            manifest.seed = Some(*seed);
            manifest.hash_input(input)?;
            manifest.write_next_to(out_dir)?;
            info(
                quiet,
                &format!("split sizes: {} / {} / {}", train.len(), valid.len(), test.len()),
            );
            Ok(())
        }
        DatagenCmd::Emit { input, templates, out } => {
            let dataset = datagen::read_dataset_jsonl(BufReader::new(File::open(input)?))?;
            let tmpl = templates.load()?;
            let mut records = Vec::with_capacity(dataset.len() * 4);
            for inst in &dataset {
                records.extend(datagen::emit_training_records(inst, &tmpl)?);
            }
            datagen::write_training_records_jsonl(&records, BufWriter::new(File::create(out)?))?;
            let mut manifest = Manifest::new("datagen emit");
            manifest.hash_input(input)?;
            manifest.hash_templates(&tmpl)?;
            manifest.write_next_to(out)?;
            info(quiet, &format!("emitted {} training records", records.len()));
            Ok(())
        }
        DatagenCmd::Fewshot { input, seed, sizes, out_dir } => {
            let dataset = datagen::read_dataset_jsonl(BufReader::new(File::open(input)?))?;
            let sizes: Vec<usize> = if sizes.is_empty() {
                DEFAULT_FEW_SHOT_SIZES.to_vec()
            } else {
                sizes.clone()
            };
            let subsets = datagen::few_shot_subsets(&dataset, &sizes, *seed)?;
            std::fs::create_dir_all(out_dir)?;
            for (size, subset) in sizes.iter().zip(&subsets) {
                let path = out_dir.join(format!("fewshot_{size}.jsonl"));
                datagen::write_dataset_jsonl(subset, BufWriter::new(File::create(path)?))?;
            }
            let mut manifest = Manifest::new("datagen fewshot");
            manifest.seed = Some(*seed);
            manifest.hash_input(input)?;
            manifest.write_next_to(out_dir)?;
            info(quiet, &format!("wrote {} nested subsets", subsets.len()));
            Ok(())
        }
        DatagenCmd::Unseen { input, seed, fractions, out_dir } => {
            let dataset = datagen::read_dataset_jsonl(BufReader::new(File::open(input)?))?;
            let fractions: Vec<f64> = if fractions.is_empty() {
                DEFAULT_UNSEEN_FRACTIONS.to_vec()
            } else {
                fractions.clone()
            };
            let splits = datagen::unseen_entity_splits(&dataset, &fractions, *seed)?;
            std::fs::create_dir_all(out_dir)?;
            for split in &splits {
                let path = out_dir.join(format!("unseen_{}.jsonl", split.fraction));
                datagen::write_dataset_jsonl(&split.training, BufWriter::new(File::create(path)?))?;
            }
            let mut manifest = Manifest::new("datagen unseen");
            manifest.seed = Some(*seed);
            manifest.hash_input(input)?;
            manifest.write_next_to(out_dir)?;
            info(quiet, &format!("wrote {} entity-sampled training sets", splits.len()));
            Ok(())
        }
    }
}

fn run_infer(args: &InferArgs, quiet: bool) -> Result<(), Error> {
    let kb = KnowledgeBase::load_auto(&args.kb)?;
    let tmpl = args.templates.load()?;
    let backend = args.backend.build()?;
    let opts = InferOptions::default();
    match (&args.query, &args.batch) {
        (Some(query), None) => {
            let response = orchestrator::infer(backend.as_ref(), &tmpl, &kb, query, &opts)?;
            print_json(&response)
        }
        (None, Some(batch)) => {
            let queries = read_lines(batch)?;
            let outcomes = infer_batch(
                backend.as_ref(),
                &tmpl,
                &kb,
                &queries,
                args.concurrency.max(1),
                &opts,
            );
            match &args.out {
                Some(path) => {
                    orchestrator::write_batch_jsonl(&outcomes, BufWriter::new(File::create(path)?))?;
                    let mut manifest = Manifest::new("infer");
                    manifest.backend_kind = Some(backend.kind().to_string());
                    manifest.hash_input(&args.kb)?;
                    manifest.hash_input(batch)?;
                    manifest.hash_templates(&tmpl)?;
                    manifest.write_next_to(path)?;
                    info(quiet, &format!("wrote {} outcomes", outcomes.len()));
                }
                None => {
                    orchestrator::write_batch_jsonl(&outcomes, std::io::stdout().lock())?;
                }
            }
            Ok(())
        }
        _ => Err(Error::InvalidArgument(
            "exactly one of --query or --batch is required".into(),
        )),
    }
}

fn run_eval(cmd: &EvalCmd, quiet: bool) -> Result<(), Error> {
    match cmd {
        EvalCmd::Entity { preds, golds, strict } => {
            let preds = read_lines(preds)?;
            let golds = read_lines(golds)?;
            let accuracy = if *strict {
                evalkit::entity_accuracy_strict(&preds, &golds)?
            } else {
                evalkit::entity_accuracy(&preds, &golds)?
            };
            print_json(&serde_json::json!({ "entity_accuracy": accuracy, "n": preds.len() }))
        }
        EvalCmd::Knowledge { responses, golds } => {
            let outcomes =
                orchestrator::read_batch_jsonl(BufReader::new(File::open(responses)?))?;
            let grounded: Vec<_> = outcomes
                .iter()
                .map(|o| {
                    o.response().cloned().ok_or_else(|| {
                        Error::InvalidArgument(
                            "batch outcomes contain inline errors; re-run inference".into(),
                        )
                    })
                })
                .collect::<Result<_, _>>()?;
            let gold = datagen::read_dataset_jsonl(BufReader::new(File::open(golds)?))?;
            let accuracy = evalkit::knowledge_accuracy(&grounded, &gold)?;
            print_json(&serde_json::json!({ "knowledge_accuracy": accuracy, "n": gold.len() }))
        }
        EvalCmd::Bleu { candidates, references } => {
            let cands = read_lines(candidates)?;
            let refs = read_lines(references)?;
            if cands.len() != refs.len() {
                return Err(Error::InvalidArgument(format!(
                    "line counts differ: {} candidates vs {} references",
                    cands.len(),
                    refs.len()
                )));
            }
            let scores: Vec<f64> = cands
                .iter()
                .zip(&refs)
                .map(|(c, r)| evalkit::bleu1(c, r))
                .collect::<Result<_, _>>()?;
            let mean = scores.iter().sum::<f64>() / scores.len().max(1) as f64;
            print_json(&serde_json::json!({ "bleu1_mean": mean, "n": scores.len() }))
        }
        EvalCmd::Kappa { a, b } => {
            let a = read_lines(a)?;
            let b = read_lines(b)?;
            let kappa = evalkit::cohen_kappa(&a, &b)?;
            print_json(&serde_json::json!({ "cohen_kappa": kappa, "n": a.len() }))
        }
        EvalCmd::H2 { ratings, group_by } => {
            let set = RatingSet::from_csv(BufReader::new(File::open(ratings)?))?;
            let group = match group_by.as_str() {
                "system" => H2GroupBy::System,
                "grounded" => H2GroupBy::Grounded,
                _ => H2GroupBy::None,
            };
            let summaries = evalkit::h2_aggregate(&set, group);
            print_json(&summaries)
        }
        EvalCmd::Judge { responses, backend, templates, out } => {
            let outcomes =
                orchestrator::read_batch_jsonl(BufReader::new(File::open(responses)?))?;
            let tmpl = templates.load()?;
            let built = backend.build()?;
            let mut verdicts: Vec<JudgeVerdict> = Vec::new();
            for (i, outcome) in outcomes.iter().enumerate() {
                if let Some(resp) = outcome.response() {
                    verdicts.push(evalkit::judge(
                        built.as_ref(),
                        &tmpl,
                        &i.to_string(),
                        &resp.query,
                        &resp.response,
                    )?);
                }
            }
            let summary = evalkit::mean_judge_score(&verdicts)?;
            if let Some(path) = out {
                let mut writer = BufWriter::new(File::create(path)?);
                for verdict in &verdicts {
                    serde_json::to_writer(&mut writer, verdict)?;
                    writer.write_all(b"\n")?;
                }
                writer.flush()?;
                let mut manifest = Manifest::new("eval judge");
                manifest.backend_kind = Some(built.kind().to_string());
                manifest.hash_input(responses)?;
                manifest.hash_templates(&tmpl)?;
                manifest.write_next_to(path)?;
                info(quiet, &format!("wrote {} verdicts", verdicts.len()));
            }
            print_json(&summary)
        }
        EvalCmd::Report {
            metrics,
            seeds,
            samples,
            backend_kind,
            note,
            out,
        } => {
            let mut report = MetricReport::new();
            report.metrics.extend(metrics.iter().cloned());
            report.seeds.extend(seeds.iter().cloned());
            report.sample_sizes.extend(samples.iter().cloned());
            report.backend_kind = backend_kind.clone();
            report.notes.extend(note.iter().cloned());
            let json = report.to_json()?;
            if let Some(path) = out {
                std::fs::write(path, format!("{json}\n"))?;
            }
            println!("{json}");
            Ok(())
        }
    }
}
