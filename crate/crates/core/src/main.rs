use std::fs::{self, File};
use std::io::{self, BufRead, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use sha2::{Digest, Sha256};

use gends::corpus::synthetic::{make_synthetic_corpus, make_unseen_extension};
use gends::corpus::{Dataset, Vocabulary};
use gends::evaluation::{evaluate_checkpoints, report_json, report_table};
use gends::inference::{DecodeMode, DecodeOptions, Engine};
use gends::kb::KnowledgeBase;
use gends::model::Variant;
use gends::service::{self, AppState, ReplyRequest};
use gends::training::{load_checkpoint, save_checkpoint, train_with_vocab, TrainingConfig};
use gends::{Error, Result};

#[derive(Parser)]
#[command(name = "gends", version, about = "Knowledge-grounded dialogue generation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic KB, train/test split and unseen-entity slice.
    Prepare(PrepareArgs),
    /// Train one variant (or all) and write checkpoints.
    Train(TrainArgs),
    /// Evaluate the checkpoints of a directory on a test set.
    Eval(EvalArgs),
    /// Generate replies for messages given as flags or on stdin.
    Generate(GenerateArgs),
    /// Interactive terminal chat.
    Chat(ModelArgs),
    /// Serve the HTTP API.
    Serve(ServeArgs),
}

#[derive(Args)]
struct PrepareArgs {
    #[arg(long, default_value = "data")]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long, default_value_t = 200)]
    pairs: usize,
    #[arg(long, default_value_t = 60)]
    entities: usize,
    #[arg(long, default_value_t = 50)]
    facts: usize,
    /// Fraction of pairs used for training.
    #[arg(long, default_value_t = 0.8)]
    train_ratio: f64,
    /// Singer blocks added to the KB for the unseen-entity slice.
    #[arg(long, default_value_t = 4)]
    unseen_blocks: usize,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long, env = "GENDS_KB")]
    kb: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// TOML file with training settings; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// full, static, single, s2sa or all
    #[arg(long, default_value = "full")]
    variant: String,
    #[arg(long)]
    seed: Option<u64>,
    /// Sets both the embedding and hidden size.
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Receives `<variant>.ckpt` and `<variant>.metrics.jsonl`.
    #[arg(long, default_value = "models")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long, env = "GENDS_KB")]
    kb: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Directory holding `<variant>.ckpt` files; missing ones are reported absent.
    #[arg(long, default_value = "models")]
    model_dir: PathBuf,
    #[arg(long, default_value = "report.json")]
    out: PathBuf,
    #[command(flatten)]
    decode: DecodeArgs,
}

#[derive(Args, Clone, Copy)]
struct DecodeArgs {
    /// Beam width; 0 selects greedy decoding.
    #[arg(long, default_value_t = 0)]
    beam: usize,
    #[arg(long, default_value_t = 30)]
    max_len: usize,
    #[arg(long)]
    no_repeat_entity: bool,
    #[arg(long, default_value_t = 512)]
    max_candidates: usize,
}

impl DecodeArgs {
    fn options(self) -> DecodeOptions {
        DecodeOptions {
            mode: if self.beam == 0 { DecodeMode::Greedy } else { DecodeMode::Beam(self.beam) },
            max_len: self.max_len,
            no_repeat_entity: self.no_repeat_entity,
            max_candidates: Some(self.max_candidates),
        }
    }
}

#[derive(Args)]
struct ModelArgs {
    #[arg(long, env = "GENDS_MODEL")]
    model: PathBuf,
    #[arg(long, env = "GENDS_KB")]
    kb: PathBuf,
    #[command(flatten)]
    decode: DecodeArgs,
}

#[derive(Args)]
struct GenerateArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Message to answer; may be repeated. Without it, stdin is read line by line.
    #[arg(long)]
    message: Vec<String>,
    /// Print the full reply object as JSON.
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct ServeArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, default_value = "127.0.0.1")]
    host: String,
    #[arg(long, env = "GENDS_PORT", default_value_t = 8080)]
    port: u16,
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn prepare(args: PrepareArgs) -> Result<()> {
    let (kb, dataset) = make_synthetic_corpus(args.seed, args.entities, args.facts, args.pairs)?;
    let (train, test) = dataset.split(args.train_ratio, args.seed)?;
    let (ext_kb, unseen) = make_unseen_extension(&kb, args.seed, args.unseen_blocks)?;
    create_dir(&args.out_dir)?;
    let d = &args.out_dir;
    kb.save(d.join("kb.jsonl"))?;
    train.save(d.join("train.jsonl"))?;
    test.save(d.join("test.jsonl"))?;
    ext_kb.save(d.join("kb_extended.jsonl"))?;
    unseen.save(d.join("unseen.jsonl"))?;
    println!(
        "wrote {} entities, {} facts, {} train / {} test pairs, {} unseen-entity queries to {}",
        kb.num_entities(),
        kb.num_facts(),
        train.len(),
        test.len(),
        unseen.len(),
        d.display()
    );
    Ok(())
}

fn load_kb(path: &Path) -> Result<KnowledgeBase> {
    let (kb, stats) = KnowledgeBase::load(path)?;
    if stats.duplicate_facts > 0 {
        log::warn!("{}: {} duplicate facts ignored", path.display(), stats.duplicate_facts);
    }
    Ok(kb)
}

fn train(args: TrainArgs) -> Result<()> {
    let kb = load_kb(&args.kb)?;
    let dataset = Dataset::load(&args.data, &kb)?;
    let mut base = match &args.config {
        Some(p) => TrainingConfig::load(p)?,
        None => TrainingConfig::default(),
    };
    if let Some(seed) = args.seed {
        base.seed = seed;
    }
    if let Some(d) = args.dim {
        base.d_emb = d;
        base.d_h = d;
    }
    if let Some(b) = args.batch_size {
        base.batch_size = b;
    }
    let variants: Vec<Variant> = if args.variant == "all" {
        Variant::ALL.to_vec()
    } else {
        vec![args.variant.parse()?]
    };
    create_dir(&args.out_dir)?;
    let vocab = Vocabulary::build(&dataset, &kb, base.min_count)?;
    for variant in variants {
        let cfg = TrainingConfig { variant, ..base.clone() };
        let metrics_path = args.out_dir.join(format!("{variant}.metrics.jsonl"));
        let file = File::create(&metrics_path).map_err(|e| Error::io(&metrics_path, e))?;
        let mut metrics = BufWriter::new(file);
        let outcome = train_with_vocab(&dataset, &kb, vocab.clone(), &cfg, |m| {
            let line = serde_json::to_string(m).map_err(|e| Error::Internal(e.to_string()))?;
            writeln!(metrics, "{line}")
                .and_then(|_| metrics.flush())
                .map_err(|e| Error::io(&metrics_path, e))
        })?;
        let ckpt = args.out_dir.join(format!("{variant}.ckpt"));
        save_checkpoint(&ckpt, &outcome.model, &outcome.vocab)?;
        let last = outcome.history.last().expect("at least one epoch");
        println!(
            "{variant}: task1 nll {:.4}, task2 nll {:.4} after {} epochs -> {}",
            last.task1_nll,
            last.task2_nll,
            last.epoch,
            ckpt.display()
        );
    }
    Ok(())
}

fn eval(args: EvalArgs) -> Result<()> {
    let kb = load_kb(&args.kb)?;
    let test = Dataset::load(&args.data, &kb)?;
    let checkpoints: Vec<(Variant, PathBuf)> = Variant::ALL
        .iter()
        .map(|v| (*v, args.model_dir.join(format!("{v}.ckpt"))))
        .collect();
    let report = evaluate_checkpoints(&checkpoints, &test, &kb, &args.decode.options())?;
    let json = report_json(&report)?;
    fs::write(&args.out, json).map_err(|e| Error::io(&args.out, e))?;
    print!("{}", report_table(&report));
    Ok(())
}

fn load_engine(args: &ModelArgs) -> Result<(Engine, String)> {
    let kb = load_kb(&args.kb)?;
    let bytes = fs::read(&args.model).map_err(|e| Error::io(&args.model, e))?;
    let digest = Sha256::digest(&bytes);
    let ckpt = load_checkpoint(&args.model)?;
    let version = format!(
        "{}-{}",
        ckpt.model.variant(),
        digest.iter().take(6).map(|b| format!("{b:02x}")).collect::<String>()
    );
    Ok((Engine::from_checkpoint(ckpt, kb)?, version))
}

fn answer(engine: &Engine, message: &str, opts: &DecodeOptions, as_json: bool) -> Result<String> {
    let request = ReplyRequest {
        message: message.to_string(),
        session_id: None,
    };
    let resp = service::reply(engine, request, opts)?;
    if as_json {
        serde_json::to_string(&resp).map_err(|e| Error::Internal(e.to_string()))
    } else {
        Ok(resp.response_text)
    }
}

fn generate(args: GenerateArgs) -> Result<()> {
    let (engine, _) = load_engine(&args.model)?;
    let opts = args.model.decode.options();
    let messages: Vec<String> = if args.message.is_empty() {
        io::stdin()
            .lock()
            .lines()
            .collect::<io::Result<_>>()
            .map_err(|e| Error::io("<stdin>", e))?
    } else {
        args.message
    };
    for m in messages.iter().filter(|m| !m.trim().is_empty()) {
        println!("{}", answer(&engine, m, &opts, args.json)?);
    }
    Ok(())
}

fn chat(args: ModelArgs) -> Result<()> {
    let (engine, version) = load_engine(&args)?;
    let opts = args.decode.options();
    println!("model {version} ready; empty line or ctrl-d quits");
    let stdin = io::stdin();
    loop {
        print!("> ");
        io::stdout().flush().map_err(|e| Error::io("<stdout>", e))?;
        let mut line = String::new();
        if stdin.lock().read_line(&mut line).map_err(|e| Error::io("<stdin>", e))? == 0 || line.trim().is_empty() {
            return Ok(());
        }
        match answer(&engine, line.trim(), &opts, false) {
            Ok(text) => println!("{text}"),
            Err(e) => println!("error: {e}"),
        }
    }
}

fn serve(args: ServeArgs) -> Result<()> {
    let runtime = tokio::runtime::Runtime::new().map_err(|e| Error::Internal(format!("tokio runtime: {e}")))?;
    runtime.block_on(async move {
        let state = AppState::loading(args.model.decode.options());
        let addr = format!("{}:{}", args.host, args.port);
        let listener = tokio::net::TcpListener::bind(&addr)
            .await
            .map_err(|e| Error::io(&addr, e))?;
        log::info!("listening on http://{addr}");
        let loader = state.clone();
        let model_args = args.model;
        tokio::task::spawn_blocking(move || match load_engine(&model_args) {
            Ok((engine, version)) => {
                log::info!("model {version} loaded");
                loader.install(engine, version);
            }
            Err(e) => {
                log::error!("cannot load model: {e}");
                std::process::exit(1);
            }
        });
        axum::serve(listener, service::router(state))
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await
            .map_err(|e| Error::Internal(format!("server: {e}")))
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Prepare(a) => prepare(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Generate(a) => generate(a),
        Command::Chat(a) => chat(a),
        Command::Serve(a) => serve(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
