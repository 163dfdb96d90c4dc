use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use conretrieve::corpus::{expand_corpus, load_corpus, split_holdout, AnnotatedExample, Conversation, CorpusFormat};
use conretrieve::encoder::checkpoint;
use conretrieve::encoder::{dump_weights, EncoderConfig, EncoderParams, ModelDims, Vocabulary};
use conretrieve::harness::{format_table, run_experiment, sample_support, DstBackend, EchoMock, ExperimentConfig, RemoteDst, TestSet};
use conretrieve::index::{self, build_index, query, rerank_latest, EncoderContext, RetrievalResult, SupportIndex};
use conretrieve::llm::ChatConfig;
use conretrieve::retry::RetryPolicy;
use conretrieve::summarizer::{
    summarize_corpus, MockSummarizer, RemoteSummarizer, SummarizeOptions, SummarizerBackend, SummaryCache,
};
use conretrieve::synthetic::dst_corpus;
use conretrieve::trainer::{encode_pairs, pair_vocab, pairs_from_cache, train as fit, Init, TrainConfig};
use conretrieve::Error;
use serde_json::json;

use crate::{Backend, BackendArgs, EvalArgs, Failure, IndexArgs, InspectArgs, ModelArgs, RetrieveArgs, SummarizeArgs, SynthArgs, TrainArgs};

type Outcome = Result<(), Failure>;

fn examples(path: &Path) -> Result<Vec<AnnotatedExample>, Failure> {
    Ok(expand_corpus(&load_corpus(path, CorpusFormat::MultiWozJson)?)?)
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Outcome {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Parse(e.to_string()))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::Stream(e).into())
}

fn sink(out: Option<&PathBuf>) -> Result<Box<dyn Write>, Failure> {
    Ok(match out {
        Some(path) => Box::new(BufWriter::new(File::create(path).map_err(Error::Stream)?)),
        None => Box::new(std::io::stdout().lock()),
    })
}

fn chat_config(args: &BackendArgs) -> Result<ChatConfig, Failure> {
    let (Some(endpoint), Some(model)) = (&args.endpoint, &args.model) else {
        return Err(Failure::Usage("--backend remote needs --endpoint and --model".into()));
    };
    let mut config = ChatConfig::new(endpoint, model);
    config.token_env = args.token_env.clone();
    Ok(config)
}

/// Loads a vocabulary and checkpoint, refusing pairs that were not trained together.
fn load_model(args: &ModelArgs) -> Result<(Vocabulary, EncoderParams), Failure> {
    let vocab = Vocabulary::load(&args.vocab)?;
    let params = checkpoint::load(&args.checkpoint)?;
    let mismatch = |expected: String, actual: String| Failure::Core(Error::FingerprintMismatch { expected, actual });
    if let Some(side) = checkpoint::load_sidecar(&args.checkpoint)? {
        let actual = checkpoint::fingerprint(&params);
        if side.fingerprint != actual {
            return Err(mismatch(side.fingerprint, actual));
        }
        if let Some(hash) = side.vocab_hash {
            if hash != vocab.hash() {
                return Err(mismatch(format!("vocabulary {hash}"), format!("vocabulary {}", vocab.hash())));
            }
        }
    }
    if vocab.len() != params.dims().vocab_size {
        return Err(mismatch(
            format!("{} vocabulary entries", params.dims().vocab_size),
            format!("{} in {}", vocab.len(), args.vocab.display()),
        ));
    }
    Ok((vocab, params))
}

pub fn synth(args: SynthArgs) -> Outcome {
    if args.dialogues == 0 {
        return Err(Failure::Usage("--dialogues must be at least 1".into()));
    }
    write_json(&args.out, &dst_corpus(args.dialogues, args.seed))
}

pub fn summarize(args: SummarizeArgs, jobs: usize) -> Outcome {
    let examples = examples(&args.corpus)?;
    let backend: Box<dyn SummarizerBackend> = match args.backend.backend {
        Backend::Mock => Box::new(MockSummarizer::new()),
        Backend::Remote => Box::new(RemoteSummarizer::new(chat_config(&args.backend)?)?),
    };
    let mut cache = SummaryCache::open(&args.cache)?;
    let options = SummarizeOptions {
        jobs,
        ..SummarizeOptions::default()
    };
    let result = summarize_corpus(&examples, backend.as_ref(), &mut cache, options);
    match result {
        Ok(stats) => {
            eprintln!(
                "{} summaries requested, {} already cached, {} in {}",
                stats.requested,
                stats.already_cached,
                cache.len(),
                args.cache.display()
            );
            Ok(())
        }
        Err(e) => {
            eprintln!("cache keeps {} summaries; rerun to resume", cache.len());
            Err(e.into())
        }
    }
}

pub fn train(args: TrainArgs) -> Outcome {
    let mut examples = examples(&args.corpus)?;
    if let Some(domain) = &args.holdout_domain {
        examples = split_holdout(&examples, domain).train;
    }
    let cache = SummaryCache::open(&args.cache)?;
    let pairs = pairs_from_cache(&examples, &cache)?;
    let vocab = pair_vocab(&pairs, 1)?;
    let dims = ModelDims::with(vocab.len(), args.dim, args.layers, args.heads, args.max_len);
    dims.validate()?;
    let mut encoder = EncoderConfig::new(dims);
    encoder.normalize = !args.no_normalize;
    let config = TrainConfig {
        batch_size: args.batch_size,
        learning_rate: args.lr,
        epochs: args.epochs,
        seed: args.seed,
        temperature: args.temperature,
        ..TrainConfig::default()
    };
    let encoded = encode_pairs(&pairs, &vocab, dims.max_len)?;
    vocab.save(&args.vocab)?;
    let vocab_hash = vocab.hash();
    let (params, report) = fit(&encoded, &config, Init::Fresh(encoder), |stats, params| {
        eprintln!("epoch {:>3}  loss {:.6}  in-batch acc {:.3}", stats.epoch, stats.mean_loss, stats.accuracy);
        checkpoint::save(params, &args.checkpoint, Some(&vocab_hash)).map(|_| ())
    })?;
    // Written even for zero epochs so later stages have a checkpoint.
    let fp = checkpoint::save(&params, &args.checkpoint, Some(&vocab_hash))?;
    eprintln!("{} pairs, {:.1}s, checkpoint {fp}", pairs.len(), report.wall_time_secs);
    if let Some(out) = &args.out {
        write_json(out, &json!({ "config": config, "epochs": report.epochs, "checkpoint": fp }))?;
    }
    Ok(())
}

pub fn index(args: IndexArgs) -> Outcome {
    let (vocab, params) = load_model(&args.model)?;
    let ctx = EncoderContext::new(&vocab, &params)?;
    let mut examples = examples(&args.corpus)?;
    if let Some(domain) = &args.holdout_domain {
        examples = split_holdout(&examples, domain).train;
    }
    if let Some(size) = args.support_size {
        examples = sample_support(&examples, size, args.seed)?;
    }
    let cache = SummaryCache::open(&args.cache)?;
    let built = build_index(&examples, &cache, &ctx)?;
    index::save_index(&built, &args.index)?;
    eprintln!("{} entries written to {}", built.len(), args.index.display());
    Ok(())
}

fn emit(out: &mut dyn Write, idx: &SupportIndex, result: &RetrievalResult) -> Outcome {
    for (rank, hit) in result.hits.iter().enumerate() {
        let line = json!({
            "query": result.query_id,
            "rank": rank + 1,
            "id": hit.id,
            "score": hit.score,
            "summary": idx.entries[hit.entry].summary.text,
        });
        writeln!(out, "{line}").map_err(Error::Stream)?;
    }
    Ok(())
}

pub fn retrieve(args: RetrieveArgs) -> Outcome {
    let (vocab, params) = load_model(&args.model)?;
    let ctx = EncoderContext::new(&vocab, &params)?;
    let idx = index::load_index(&args.index)?;
    ctx.check(&idx)?;
    let queries: Vec<Conversation> = match (&args.query, &args.corpus) {
        (Some(text), _) => vec![Conversation::from_transcript("query", text)?],
        (None, Some(path)) => {
            examples(path)?.into_iter().map(|e| e.conversation).collect()
        }
        (None, None) => unreachable!("clap requires one query source"),
    };
    let mut out = sink(args.out.as_ref())?;
    for conversation in &queries {
        let result = if args.rerank {
            rerank_latest(&idx, conversation, &ctx, args.pool, args.k)?
        } else {
            query(&idx, conversation, &ctx, args.k)?
        };
        emit(out.as_mut(), &idx, &result)?;
    }
    out.flush().map_err(|e| Error::Stream(e).into())
}

pub fn eval(args: EvalArgs, jobs: usize) -> Outcome {
    let (vocab, params) = load_model(&args.model)?;
    let ctx = EncoderContext::new(&vocab, &params)?;
    let pool = examples(&args.corpus)?;
    let test = match &args.test_corpus {
        Some(path) => {
            TestSet::Fixed(examples(path)?)
        }
        None => TestSet::Support,
    };
    let backend: Box<dyn DstBackend> = match args.backend.backend {
        Backend::Mock => Box::new(EchoMock),
        Backend::Remote => Box::new(RemoteDst::new(chat_config(&args.backend)?, RetryPolicy::default())?),
    };
    let config = ExperimentConfig {
        support_sizes: args.support_sizes,
        seeds: args.seeds,
        k: args.k,
        rerank_pool: args.rerank.then_some(args.pool),
        holdout_domain: args.holdout_domain,
        jobs,
        ..ExperimentConfig::default()
    };
    let cache = SummaryCache::open(&args.cache)?;
    let report = run_experiment(&pool, test, &cache, &ctx, backend.as_ref(), &config)?;
    if let Some(out) = &args.out {
        write_json(out, &report)?;
    }
    print!("{}", format_table(&report.aggregate));
    let failed: usize = report.reports.iter().map(|r| r.failures).sum();
    if failed > 0 {
        eprintln!("{failed} turns failed and were scored as empty predictions");
    }
    Ok(())
}

pub fn inspect(args: InspectArgs) -> Outcome {
    let (vocab, params) = load_model(&args.model)?;
    let conversation = match (&args.query, &args.corpus, &args.example) {
        (Some(text), _, _) => Conversation::from_transcript("query", text)?,
        (None, Some(path), Some(id)) => {
            examples(path)?
                .into_iter()
                .find(|e| &e.id() == id)
                .map(|e| e.conversation)
                .ok_or_else(|| Failure::Usage(format!("no example {id} in {}", path.display())))?
        }
        _ => unreachable!("clap requires one conversation source"),
    };
    let mut out = sink(args.out.as_ref())?;
    dump_weights(&conversation, &vocab, &params, &mut out)?;
    out.flush().map_err(|e| Error::Stream(e).into())
}
