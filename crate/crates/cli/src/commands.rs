use std::fmt;
use std::fs::File;
use std::io::{self, BufRead, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::Context;
use prefchat_core::data::synth::synth_corpus;
use prefchat_core::data::{
    build_quadruples, compute_stats_with, keyed_rng, load_dataset, save_dataset, split_dataset, write_records,
    DialogueRecord, Split,
};
use prefchat_core::eval::{build_ranking_instances, evaluate_ranking, self_chat_eval, static_eval, Scorer};
use prefchat_core::generation::{respond, DecodeConfig};
use prefchat_core::train::{check_random_pairs, epoch_seed, TrainEvent, Trainer};
use prefchat_core::{DialogueContext, Model, Vocabulary};
use prefchat_service::session::MAX_CHAT_ROUNDS;
use rand::RngCore;

use crate::config::CliConfig;
use crate::{Command, TrainArgs};

/// A failed command: invalid input (exit 1) or a runtime failure (exit 2).
#[derive(Debug)]
pub enum Failure {
    Invalid(anyhow::Error),
    Runtime(anyhow::Error),
}

impl Failure {
    pub fn code(&self) -> u8 {
        match self {
            Failure::Invalid(_) => 1,
            Failure::Runtime(_) => 2,
        }
    }

    pub fn error(&self) -> &anyhow::Error {
        match self {
            Failure::Invalid(e) | Failure::Runtime(e) => e,
        }
    }
}

/// An error caused by the caller's input.
#[derive(Debug)]
struct Invalid(String);

impl fmt::Display for Invalid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Invalid {}

fn invalid(msg: impl Into<String>) -> anyhow::Error {
    Invalid(msg.into()).into()
}

fn classify(e: anyhow::Error) -> Failure {
    use prefchat_core::Error as E;
    let is_invalid = e.chain().any(|c| {
        c.is::<Invalid>()
            || c.is::<toml::de::Error>()
            || c.is::<serde_json::Error>()
            || matches!(
                c.downcast_ref::<E>(),
                Some(
                    E::OutOfVocabulary(_)
                        | E::SequenceTooLong { .. }
                        | E::EmptyContext
                        | E::RolesNotAlternating(_)
                        | E::EmptyResponse
                        | E::InvalidConfig(_)
                        | E::InvalidArgument(_)
                        | E::Checkpoint { .. }
                        | E::MalformedLine { .. }
                        | E::InvalidRecord { .. }
                        | E::NoRelevant(_)
                        | E::Rating { .. }
                        | E::EmptyDataset
                        | E::Json(_)
                )
            )
    });
    if is_invalid {
        Failure::Invalid(e)
    } else {
        Failure::Runtime(e)
    }
}

pub fn run(command: Command, mut cfg: CliConfig, seed: Option<u64>) -> Result<(), Failure> {
    if let Some(s) = seed {
        cfg.train.seed = s;
        cfg.decode.rng_seed = s;
        cfg.service.seed = s;
        cfg.synth.seed = s;
    }
    let seed = seed.unwrap_or(0);
    let result = match command {
        Command::Train(args) => train(args, &cfg),
        Command::Serve { checkpoint } => serve(checkpoint, cfg),
        Command::Chat { checkpoint } => chat(&checkpoint, &cfg.decode),
        Command::SelfChat { checkpoint, openings, rounds, out } => {
            self_chat(&checkpoint, &openings, rounds, out.as_deref(), &cfg.decode)
        }
        Command::EvalRank { data, checkpoint, scorer } => eval_rank(&data, checkpoint.as_deref(), &scorer, &cfg, seed),
        Command::EvalStatic { checkpoint, data, n, out } => {
            eval_static(&checkpoint, &data, n, out.as_deref(), &cfg.decode, seed)
        }
        Command::Stats { data, include_rejected } => stats(&data, include_rejected),
        Command::ExportQuadruples { data, epoch, out } => export_quadruples(&data, epoch, out.as_deref(), seed),
        Command::Gradcheck { pairs, epsilon, tolerance } => gradcheck(pairs, epsilon, tolerance, seed),
        Command::Split { data, out_dir, fractions } => split(&data, &out_dir, &fractions, seed),
        Command::Synth { out } => {
            let records = synth_corpus(&cfg.synth).map_err(anyhow::Error::from);
            records.and_then(|r| save_dataset(&out, &r).map_err(Into::into))
        }
    };
    result.map_err(classify)
}

/// Stdout or a buffered file.
fn output(path: Option<&Path>) -> anyhow::Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).with_context(|| format!("creating {}", p.display()))?)),
        None => Box::new(io::stdout().lock()),
    })
}

fn load(path: &Path) -> anyhow::Result<Vec<DialogueRecord>> {
    load_dataset(path).with_context(|| format!("loading {}", path.display()))
}

fn load_model(path: &Path) -> anyhow::Result<Model> {
    Model::load(path).with_context(|| format!("loading checkpoint {}", path.display()))
}

/// Every character of the final texts and shown candidates.
fn vocabulary<'a>(records: impl IntoIterator<Item = &'a DialogueRecord>) -> Vocabulary {
    Vocabulary::from_texts(records.into_iter().flat_map(|r| &r.turns).flat_map(|t| {
        std::iter::once(t.final_text.as_str()).chain(t.shown_candidates.iter().map(String::as_str))
    }))
}

fn train(args: TrainArgs, cfg: &CliConfig) -> anyhow::Result<()> {
    let train = load(&args.data)?;
    let valid = args.valid.as_deref().map(load).transpose()?.unwrap_or_default();
    let mut trainer = match &args.resume {
        Some(path) => Trainer::resume(path, cfg.train.clone())?,
        None => {
            let vocab = vocabulary(train.iter().chain(&valid));
            let model = Model::init(cfg.model.build(vocab.len(), cfg.train.seed), vocab)?;
            Trainer::new(model, cfg.train.clone())?
        }
    };
    if let Some(dir) = &args.checkpoint_dir {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        trainer = trainer.with_checkpoint_dir(dir);
    }
    let mut events = args.events.as_deref().map(|p| output(Some(p))).transpose()?;
    let mut write_err = None;
    trainer.run(&train, &valid, &mut |e| {
        if let TrainEvent::Epoch { epoch, mean_nll, mean_pe, mean_total, validation, .. } = e {
            log::info!("epoch {epoch}: nll {mean_nll:.4} pe {mean_pe:.4} total {mean_total:.4}");
            if let Some(v) = validation {
                log::info!("  valid: nll {:.4} pe {:.4} p@1 {:.3} (n={})", v.nll, v.pe, v.p_at_1, v.n);
            }
        }
        if let Some(w) = events.as_mut() {
            let line = serde_json::to_string(e).expect("event serialises");
            if let Err(err) = writeln!(w, "{line}") {
                write_err.get_or_insert(err);
            }
        }
    })?;
    if let Some(err) = write_err {
        return Err(err).context("writing training events");
    }
    if let Some(w) = events.as_mut() {
        w.flush()?;
    }
    trainer.save_checkpoint(&args.out)?;
    log::info!("wrote {}", args.out.display());
    Ok(())
}

fn serve(checkpoint: Option<PathBuf>, cfg: CliConfig) -> anyhow::Result<()> {
    let mut service = cfg.service;
    service.apply_env(|k| std::env::var(k).ok()).map_err(|e| invalid(e.to_string()))?;
    if checkpoint.is_some() {
        service.checkpoint = checkpoint;
    }
    service.validate().map_err(|e| invalid(e.to_string()))?;
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(prefchat_service::serve(service))
}

fn chat(checkpoint: &Path, decode: &DecodeConfig) -> anyhow::Result<()> {
    let model = load_model(checkpoint)?;
    let mut ctx = DialogueContext::default();
    let mut out = io::stdout().lock();
    for (round, line) in io::stdin().lock().lines().enumerate() {
        let line = line?;
        let text = line.trim();
        if text.is_empty() {
            continue;
        }
        if round >= MAX_CHAT_ROUNDS {
            writeln!(out, "(chat ended after {MAX_CHAT_ROUNDS} rounds)")?;
            break;
        }
        let mut next = ctx.clone();
        next.push(text);
        let cfg = DecodeConfig { rng_seed: keyed_rng(decode.rng_seed, "chat", round).next_u64(), ..decode.clone() };
        match respond(&model, &next, &cfg) {
            Ok(reply) => {
                writeln!(out, "{}\t{:.4}", reply.text, reply.preference_score)?;
                next.push(reply.text);
                ctx = next;
            }
            Err(e) => writeln!(out, "(cannot respond: {e})")?,
        }
        out.flush()?;
    }
    Ok(())
}

fn self_chat(checkpoint: &Path, openings: &Path, rounds: usize, out: Option<&Path>, decode: &DecodeConfig) -> anyhow::Result<()> {
    let model = load_model(checkpoint)?;
    let text = std::fs::read_to_string(openings).with_context(|| format!("reading {}", openings.display()))?;
    let openings: Vec<String> = text.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from).collect();
    if openings.is_empty() {
        return Err(invalid("no openings given"));
    }
    let records = self_chat_eval(&model, &openings, rounds, decode)?;
    let mut w = output(out)?;
    write_records(&mut w, &records)?;
    w.flush()?;
    Ok(())
}

fn parse_scorers(name: &str) -> anyhow::Result<Vec<Scorer>> {
    if name == "all" {
        return Ok(Scorer::ALL.to_vec());
    }
    Scorer::ALL
        .into_iter()
        .find(|s| s.name() == name)
        .map(|s| vec![s])
        .ok_or_else(|| invalid(format!("unknown scorer {name:?}")))
}

fn eval_rank(data: &Path, checkpoint: Option<&Path>, scorer: &str, cfg: &CliConfig, seed: u64) -> anyhow::Result<()> {
    let scorers = parse_scorers(scorer)?;
    let records = load(data)?;
    let model = match checkpoint {
        Some(p) => load_model(p)?,
        None => {
            let vocab = vocabulary(&records);
            Model::init(cfg.model.build(vocab.len(), seed), vocab)?
        }
    };
    let instances = build_ranking_instances(&records, seed);
    if instances.is_empty() {
        return Err(invalid("the data holds no revise or rewrite turns to rank"));
    }
    let mut results = serde_json::Map::new();
    for s in scorers {
        let m = evaluate_ranking(s, &model, &instances)?;
        results.insert(s.name().to_string(), serde_json::to_value(m)?);
    }
    println!("{}", serde_json::to_string_pretty(&results)?);
    Ok(())
}

fn eval_static(checkpoint: &Path, data: &Path, n: usize, out: Option<&Path>, decode: &DecodeConfig, seed: u64) -> anyhow::Result<()> {
    let model = load_model(checkpoint)?;
    let records = load(data)?;
    let rows = static_eval(&model, &records, n, seed, decode)?;
    let mut w = output(out)?;
    for row in rows {
        writeln!(w, "{}", serde_json::to_string(&row)?)?;
    }
    w.flush()?;
    Ok(())
}

fn stats(data: &Path, include_rejected: bool) -> anyhow::Result<()> {
    let s = compute_stats_with(&load(data)?, include_rejected);
    println!("{}", serde_json::to_string_pretty(&s)?);
    Ok(())
}

fn export_quadruples(data: &Path, epoch: usize, out: Option<&Path>, seed: u64) -> anyhow::Result<()> {
    let quads = build_quadruples(&load(data)?, epoch_seed(seed, epoch));
    let mut w = output(out)?;
    for q in &quads {
        writeln!(w, "{}", serde_json::to_string(q)?)?;
    }
    w.flush()?;
    log::info!("{} quadruples", quads.len());
    Ok(())
}

fn gradcheck(pairs: usize, epsilon: f64, tolerance: f64, seed: u64) -> anyhow::Result<()> {
    if pairs == 0 || !(epsilon > 0.0) {
        return Err(invalid("pairs and epsilon must be positive"));
    }
    let reports = check_random_pairs(pairs, seed, epsilon)?;
    let mut worst = 0.0f64;
    for (i, r) in reports.iter().enumerate() {
        println!(
            "pair {i:>3}: max relative error {:.3e} over {} parameters (worst in {})",
            r.max_relative_error, r.checked, r.worst_tensor
        );
        worst = worst.max(r.max_relative_error);
    }
    println!("worst {worst:.3e}, tolerance {tolerance:.1e}");
    anyhow::ensure!(worst < tolerance, "gradient check failed: {worst:.3e} >= {tolerance:.1e}");
    Ok(())
}

fn parse_fractions(s: &str) -> anyhow::Result<[f64; 3]> {
    let v: Vec<f64> = s
        .split(',')
        .map(|x| x.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|e| invalid(format!("fractions {s:?}: {e}")))?;
    v.try_into().map_err(|_| invalid(format!("fractions {s:?} must have three entries")))
}

fn split(data: &Path, out_dir: &Path, fractions: &str, seed: u64) -> anyhow::Result<()> {
    let fractions = parse_fractions(fractions)?;
    let mut records = load(data)?;
    split_dataset(&mut records, fractions, seed)?;
    std::fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    for (split, name) in [(Split::Train, "train"), (Split::Valid, "valid"), (Split::Test, "test")] {
        let part: Vec<_> = records.iter().filter(|r| r.split == split).cloned().collect();
        save_dataset(&out_dir.join(format!("{name}.jsonl")), &part)?;
        log::info!("{name}: {} dialogues", part.len());
    }
    Ok(())
}
