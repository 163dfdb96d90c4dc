//! Acceptance suite: one line per criterion, non-zero exit if any fails.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use common::{brute_force, random_corpus, sentence, tiny_params, word_vocab};
use conretrieve::corpus::{expand_corpus, load_corpus, AnnotatedExample, Conversation, CorpusFormat, DialogueState};
use conretrieve::encoder::{
    checkpoint, encode_tokens, tokenize, weighted_tokens_embedding, EncoderConfig, EncoderParams, ModelDims,
    TokenEmbeddingMatrix, Vocabulary,
};
use conretrieve::harness::{
    jga, parse_state, partition, run_experiment, sample_support, slot_f1, EchoMock, EvalReport, ExperimentConfig,
    TestSet,
};
use conretrieve::index::{self, build_index, query, EncoderContext};
use conretrieve::summarizer::{render_prompt, summarize_corpus, MockSummarizer, SummarizeOptions, SummaryCache};
use conretrieve::synthetic::{dst_corpus, separable_pairs};
use conretrieve::trainer::{
    contrastive_loss, encode_pairs, pair_vocab, pairs_from_cache, recall_at_1, similarity, train, Init, TrainConfig,
};
use conretrieve::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(elapsed: Duration, limit: Duration) -> Result<(), String> {
    ensure(elapsed < limit, || format!("took {elapsed:.1?}, limit {limit:?}"))
}

fn gradient_oracle() -> Outcome {
    let start = Instant::now();
    let samples = common::fd::check(|_| {}, 1);
    within(start.elapsed(), Duration::from_secs(30))?;
    let tensors: std::collections::BTreeSet<&str> = samples.iter().map(|s| s.tensor.as_str()).collect();
    ensure(samples.len() >= 20, || format!("only {} coordinates", samples.len()))?;
    ensure(tensors.contains("relevance") && tensors.contains("relevance_bias"), || {
        "scorer parameters not sampled".into()
    })?;
    let worst = samples.iter().max_by(|a, b| a.error.total_cmp(&b.error)).unwrap();
    ensure(worst.error < 1e-3, || {
        format!("{}[{}] relative error {:e}", worst.tensor, worst.index, worst.error)
    })?;
    Ok(format!(
        "{} coordinates over {} tensors, max rel err {:.1e}",
        samples.len(),
        tensors.len(),
        worst.error
    ))
}

fn m(rows: &[&[f64]]) -> TokenEmbeddingMatrix {
    TokenEmbeddingMatrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>())
}

fn similarity_cases() -> Outcome {
    let w = 0.0;
    let cases = [
        (similarity(&m(&[&[1.0, 0.0]]), &m(&[&[1.0, 0.0], &[0.0, 1.0]])), 1.0),
        (similarity(&m(&[&[1.0, 0.0], &[0.0, 1.0]]), &m(&[&[1.0, 0.0]])), 0.5),
        (similarity(&m(&[&[w * 1.0, w * 0.0], &[0.0, 1.0]]), &m(&[&[0.0, 1.0]])), 0.5),
    ];
    for (i, (got, want)) in cases.into_iter().enumerate() {
        let got = got.map_err(|e| e.to_string())?;
        ensure((got - want).abs() <= 1e-9, || format!("case {}: {got} != {want}", i + 1))?;
    }
    Ok("1.0 / 0.5 / 0.5 with zero-weight row".into())
}

fn loss_closed_forms() -> Outcome {
    let (one, _) = contrastive_loss(&[0.37], 1, 1.0).map_err(|e| e.to_string())?;
    ensure(one == 0.0, || format!("B=1 loss {one}"))?;
    let (uniform, _) = contrastive_loss(&[0.3; 4], 2, 1.0).map_err(|e| e.to_string())?;
    ensure((uniform - std::f64::consts::LN_2).abs() <= 1e-9, || format!("uniform loss {uniform}"))?;
    let (sep, _) = contrastive_loss(&[10.0, 0.0, 0.0, 10.0], 2, 1.0).map_err(|e| e.to_string())?;
    let want = -(10f64.exp() / (10f64.exp() + 1.0)).ln();
    ensure((sep - want).abs() <= 1e-9, || format!("separated loss {sep} != {want}"))?;
    Ok(format!("0 / ln 2 / {sep:.4e}"))
}

fn retrieval_oracle() -> Outcome {
    let start = Instant::now();
    let vocab = word_vocab();
    let params = tiny_params(&vocab, 21);
    let ctx = EncoderContext::new(&vocab, &params).map_err(|e| e.to_string())?;
    let (mut examples, cache) = random_corpus(200, 31);
    examples.truncate(200);
    let index = build_index(&examples, &cache, &ctx).map_err(|e| e.to_string())?;
    ensure(index.len() == 200, || format!("index has {} entries", index.len()))?;
    let (queries, _) = random_corpus(50, 32);
    let mut worst: f64 = 0.0;
    for q in queries.iter().take(50) {
        let got = query(&index, &q.conversation, &ctx, 5).map_err(|e| e.to_string())?;
        let want = brute_force(&index, &q.conversation, &ctx, 5);
        let got_ids: Vec<&str> = got.hits.iter().map(|h| h.id.as_str()).collect();
        let want_ids: Vec<&str> = want.iter().map(|(id, _)| id.as_str()).collect();
        ensure(got_ids == want_ids, || format!("{}: {got_ids:?} vs {want_ids:?}", q.id()))?;
        for (h, (_, s)) in got.hits.iter().zip(&want) {
            worst = worst.max((h.score - s).abs());
        }
    }
    ensure(worst < 1e-6, || format!("score gap {worst:e}"))?;
    within(start.elapsed(), Duration::from_secs(10))?;
    Ok(format!("50 queries, max score gap {worst:.1e}, {:.2?}", start.elapsed()))
}

fn weighting_contract() -> Outcome {
    let vocab = word_vocab();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut history = 0usize;
    let mut latest = 0usize;
    let (mut lo, mut hi) = (1.0f64, 0.0f64);
    for n in 0..1000u64 {
        let mut params = tiny_params(&vocab, n % 25);
        let scale = rng.random_range(1.0..300.0);
        params.tensors.relevance.iter_mut().for_each(|x| *x *= scale);
        params.tensors.relevance_bias[0] = rng.random_range(-3.0..3.0);
        let utterances = rng.random_range(1..7);
        let lines: Vec<String> = (0..utterances)
            .map(|i| {
                let who = if (utterances - 1 - i) % 2 == 0 { "USER" } else { "SYSTEM" };
                let len = rng.random_range(1..6);
                format!("{who}: {}", sentence(&mut rng, len))
            })
            .collect();
        let conv = Conversation::from_transcript(format!("w{n}"), &lines.join("\n")).map_err(|e| e.to_string())?;
        let tokens = tokenize(&conv, &vocab, 64).map_err(|e| e.to_string())?;
        let (weighted, w) = weighted_tokens_embedding(&tokens, &params).map_err(|e| e.to_string())?;
        let plain = encode_tokens(&tokens, &params).map_err(|e| e.to_string())?;
        let d = plain.dim;
        for (t, &wt) in w.weights.iter().enumerate() {
            if tokens.latest_mask[t] {
                latest += 1;
                ensure(wt == 1.0, || format!("{}: latest weight {wt}", conv.id))?;
            } else {
                history += 1;
                ensure(wt > 0.0 && wt < 1.0, || format!("{}: history weight {wt}", conv.id))?;
                lo = lo.min(wt);
                hi = hi.max(wt);
            }
            for j in 0..d {
                let gap = (weighted.data[t * d + j] - wt * plain.data[t * d + j]).abs();
                ensure(gap <= 1e-9, || format!("{}: row {t} differs by {gap:e}", conv.id))?;
            }
        }
    }
    Ok(format!("{latest} latest / {history} history tokens, history w in [{lo:.3e}, {hi:.6}]"))
}

fn distillation_sanity() -> Outcome {
    let start = Instant::now();
    let pairs = separable_pairs(64).map_err(|e| e.to_string())?;
    let vocab = pair_vocab(&pairs, 1).map_err(|e| e.to_string())?;
    let config = TrainConfig::default();
    let dims = ModelDims::new(vocab.len());
    let encoded = encode_pairs(&pairs, &vocab, dims.max_len).map_err(|e| e.to_string())?;
    let (params, report) =
        train(&encoded, &config, Init::Fresh(EncoderConfig::new(dims)), |_, _| Ok(())).map_err(|e| e.to_string())?;
    let first = report.epochs.first().ok_or("no epochs")?;
    let last = report.epochs.last().ok_or("no epochs")?;
    ensure(report.epochs.len() == 20, || format!("{} epochs", report.epochs.len()))?;
    ensure(last.mean_loss < first.mean_loss, || {
        format!("loss {} -> {}", first.mean_loss, last.mean_loss)
    })?;
    ensure(last.accuracy >= 0.9, || format!("in-batch accuracy {}", last.accuracy))?;
    let recall = recall_at_1(&encoded, &params).map_err(|e| e.to_string())?;
    ensure(recall >= 0.9, || format!("recall@1 {recall}"))?;
    within(start.elapsed(), Duration::from_secs(300))?;
    Ok(format!(
        "loss {:.4} -> {:.4}, in-batch acc {:.3}, recall@1 {:.3}, {:.1?}",
        first.mean_loss,
        last.mean_loss,
        last.accuracy,
        recall,
        start.elapsed()
    ))
}

fn metric_fixtures() -> Outcome {
    let fixture = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures/multiwoz_small.json");
    let examples = expand_corpus(&load_corpus(fixture, CorpusFormat::MultiWozJson).map_err(|e| e.to_string())?)
        .map_err(|e| e.to_string())?;
    let picked = ["SNG01856.json", "SNG0412.json", "MUL2305.json"];
    let gold: Vec<DialogueState> = examples
        .iter()
        .filter(|e| picked.contains(&e.conversation.id.as_str()))
        .map(|e| e.state.clone())
        .collect();
    let completions = [
        "hotel-area=north; hotel-pricerange=moderate",
        "hotel-area=north; hotel-pricerange=cheap; hotel-type=guesthouse",
        "attraction-type=park; attraction-area=east",
        "attraction-type=park",
        "hotel-stars=4; hotel-book stay=3",
        "hotel-stars=4; hotel-book stay=3; hotel-book people=1; taxi-departure=acorn guest house; taxi-destination=station; taxi-leaveat=09:15",
    ];
    let pred: Vec<DialogueState> = completions.iter().map(|c| parse_state(c).state).collect();
    ensure(gold.len() == 6, || format!("{} gold turns", gold.len()))?;
    // Turns 1, 3 and 5 are exact; 14 pairs correct of 16 predicted and 18 gold.
    let j = jga(&pred, &gold).map_err(|e| e.to_string())?;
    let f = slot_f1(&pred, &gold).map_err(|e| e.to_string())?;
    ensure(j == 0.5, || format!("jga {j}"))?;
    ensure((f - 14.0 / 17.0).abs() < 1e-12, || format!("f1 {f}"))?;

    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..200 {
        let turns = rng.random_range(1..8);
        let golds: Vec<DialogueState> = (0..turns)
            .map(|_| {
                let n = rng.random_range(0..4);
                (0..n)
                    .map(|i| (format!("d{}-s{i}", rng.random_range(0..3)), sentence(&mut rng, 1)))
                    .collect()
            })
            .collect();
        let preds = golds.clone();
        let (j, f) = (jga(&preds, &golds).unwrap(), slot_f1(&preds, &golds).unwrap());
        ensure(j == 1.0 && f == 1.0, || format!("perfect predictions gave jga {j} f1 {f}"))?;
    }
    Ok(format!("jga {j} f1 {f:.6} (14/17); 200 perfect runs give 1/1"))
}

fn prompt_golden() -> Outcome {
    let golden = include_str!("fixtures/summary_prompt.golden.txt");
    let conv = Conversation::from_transcript(
        "g",
        "USER: I need a taxi to the museum\nSYSTEM: When do you want to leave?\nUSER: after 17:15",
    )
    .map_err(|e| e.to_string())?;
    let rendered = render_prompt(&conv);
    if rendered != golden {
        let at = rendered.bytes().zip(golden.bytes()).position(|(a, b)| a != b).unwrap_or(rendered.len().min(golden.len()));
        return Err(format!("first difference at byte {at}"));
    }
    Ok(format!("{} bytes identical", golden.len()))
}

struct DstRun {
    pool: Vec<AnnotatedExample>,
    test: Vec<AnnotatedExample>,
    cache: SummaryCache,
    vocab: Vocabulary,
    params: EncoderParams,
    dir: tempfile::TempDir,
}

/// Summarize, train and persist on the synthetic DST corpus, reloading every
/// artifact from disk.
fn dst_run() -> Result<DstRun, String> {
    let err = |e: Error| e.to_string();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let corpus_path = dir.path().join("corpus.json");
    let raw = serde_json::to_string(&dst_corpus(20, 1)).map_err(|e| e.to_string())?;
    std::fs::write(&corpus_path, raw).map_err(|e| e.to_string())?;
    let pool = expand_corpus(&load_corpus(&corpus_path, CorpusFormat::MultiWozJson).map_err(err)?).map_err(err)?;
    let test = expand_corpus(&dst_corpus(10, 99)).map_err(err)?;

    let cache_path = dir.path().join("summaries.jsonl");
    let mut cache = SummaryCache::open(&cache_path).map_err(err)?;
    summarize_corpus(&pool, &MockSummarizer::new(), &mut cache, SummarizeOptions::default()).map_err(err)?;
    let cache = SummaryCache::open(&cache_path).map_err(err)?;

    let pairs = pairs_from_cache(&pool, &cache).map_err(err)?;
    let vocab = pair_vocab(&pairs, 1).map_err(err)?;
    let dims = ModelDims::new(vocab.len());
    let encoded = encode_pairs(&pairs, &vocab, dims.max_len).map_err(err)?;
    let config = TrainConfig {
        learning_rate: 1e-3,
        temperature: 0.05,
        ..TrainConfig::default()
    };
    let ckpt = dir.path().join("encoder.cnvs");
    let vocab_hash = vocab.hash();
    train(&encoded, &config, Init::Fresh(EncoderConfig::new(dims)), |_, p| {
        checkpoint::save(p, &ckpt, Some(&vocab_hash)).map(|_| ())
    })
    .map_err(err)?;
    let params = checkpoint::load(&ckpt).map_err(err)?;
    Ok(DstRun {
        pool,
        test,
        cache,
        vocab,
        params,
        dir,
    })
}

fn shared_run() -> Result<&'static DstRun, String> {
    static RUN: OnceLock<Result<DstRun, String>> = OnceLock::new();
    RUN.get_or_init(dst_run).as_ref().map_err(Clone::clone)
}

fn end_to_end() -> Outcome {
    let start = Instant::now();
    let run = shared_run()?;
    let ctx = EncoderContext::new(&run.vocab, &run.params).map_err(|e| e.to_string())?;
    let support = run.pool.len();
    let index_path = run.dir.path().join("support.cidx");
    let built = build_index(&run.pool, &run.cache, &ctx).map_err(|e| e.to_string())?;
    index::save_index(&built, &index_path).map_err(|e| e.to_string())?;
    let loaded = index::load_index(&index_path).map_err(|e| e.to_string())?;
    ctx.check(&loaded).map_err(|e| e.to_string())?;

    let config = ExperimentConfig {
        support_sizes: vec![support],
        seeds: vec![1],
        ..ExperimentConfig::default()
    };
    let report = run_experiment(&run.pool, TestSet::Support, &run.cache, &ctx, &EchoMock, &config)
        .map_err(|e| e.to_string())?;
    let path = run.dir.path().join("report.json");
    std::fs::write(&path, serde_json::to_vec_pretty(&report.reports).unwrap()).map_err(|e| e.to_string())?;
    let reread: Vec<EvalReport> =
        serde_json::from_slice(&std::fs::read(&path).unwrap()).map_err(|e| e.to_string())?;
    let r = &reread[0];
    ensure(r.records.len() == support, || format!("{} records", r.records.len()))?;
    ensure(r.failures == 0, || format!("{} failed turns", r.failures))?;
    ensure(r.recompute().map_err(|e| e.to_string())? == (r.jga, r.slot_f1), || {
        "report metrics do not match records".into()
    })?;
    ensure(r.jga == 1.0, || format!("jga {}", r.jga))?;
    Ok(format!("{support} turns, jga {} f1 {}, {:.1?}", r.jga, r.slot_f1, start.elapsed()))
}

fn support_monotonicity() -> Outcome {
    let run = shared_run()?;
    let ctx = EncoderContext::new(&run.vocab, &run.params).map_err(|e| e.to_string())?;
    let config = ExperimentConfig {
        support_sizes: vec![25, 50, 100],
        seeds: vec![1, 2, 3],
        ..ExperimentConfig::default()
    };
    let report = run_experiment(
        &run.pool,
        TestSet::Fixed(run.test.clone()),
        &run.cache,
        &ctx,
        &EchoMock,
        &config,
    )
    .map_err(|e| e.to_string())?;
    let means: Vec<f64> = report.aggregate.iter().map(|r| r.jga_mean).collect();
    ensure(means.len() == 3, || format!("{} aggregate rows", means.len()))?;
    ensure(means.windows(2).all(|w| w[0] <= w[1]), || format!("mean jga {means:?}"))?;
    Ok(format!("mean jga 25/50/100 = {:.4} / {:.4} / {:.4}", means[0], means[1], means[2]))
}

fn ood_partition() -> Outcome {
    let err = |e: Error| e.to_string();
    let fixture = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures/multiwoz_small.json");
    let examples = expand_corpus(&load_corpus(fixture, CorpusFormat::MultiWozJson).map_err(err)?).map_err(err)?;
    let mut cache = SummaryCache::in_memory();
    summarize_corpus(&examples, &MockSummarizer::new(), &mut cache, SummarizeOptions::default()).map_err(err)?;
    let pairs = pairs_from_cache(&examples, &cache).map_err(err)?;
    let vocab = pair_vocab(&pairs, 1).map_err(err)?;
    let params = EncoderParams::init(EncoderConfig::new(ModelDims::with(vocab.len(), 16, 1, 2, 128)), 4).map_err(err)?;
    let ctx = EncoderContext::new(&vocab, &params).map_err(err)?;
    let mut lines = Vec::new();
    for domain in ["taxi", "hotel", "attraction"] {
        let (pool, test) = partition(&examples, TestSet::Support, Some(domain)).map_err(err)?;
        let TestSet::Fixed(test) = test else {
            return Err("holdout mode must fix the test set".into());
        };
        let support = sample_support(&pool, pool.len(), 1).map_err(err)?;
        let index = build_index(&support, &cache, &ctx).map_err(err)?;
        let leaked = index.entries.iter().filter(|e| e.example.domain_tags.contains(domain)).count();
        ensure(leaked == 0, || format!("{domain}: {leaked} holdout entries in index"))?;
        ensure(!test.is_empty() && test.iter().all(|e| e.domain_tags.contains(domain)), || {
            format!("{domain}: test set has non-holdout turns")
        })?;
        let config = ExperimentConfig {
            support_sizes: vec![support.len()],
            seeds: vec![1],
            k: 2,
            holdout_domain: Some(domain.into()),
            ..ExperimentConfig::default()
        };
        let report = run_experiment(&examples, TestSet::Support, &cache, &ctx, &EchoMock, &config).map_err(err)?;
        let by_id: std::collections::BTreeMap<String, &AnnotatedExample> =
            examples.iter().map(|e| (e.id(), e)).collect();
        for rec in &report.reports[0].records {
            ensure(by_id[&rec.example_id].domain_tags.contains(domain), || {
                format!("{domain}: evaluated {}", rec.example_id)
            })?;
            ensure(rec.retrieved.iter().all(|id| !by_id[id].domain_tags.contains(domain)), || {
                format!("{domain}: retrieved a holdout exemplar")
            })?;
        }
        lines.push(format!("{domain} {}/{}", index.len(), test.len()));
    }
    Ok(format!("index/test sizes: {}", lines.join(", ")))
}

fn persistence() -> Outcome {
    let err = |e: Error| e.to_string();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let vocab = word_vocab();
    let params = tiny_params(&vocab, 77);
    let ckpt = dir.path().join("m.cnvs");
    checkpoint::save(&params, &ckpt, Some(&vocab.hash())).map_err(err)?;
    let loaded = checkpoint::load(&ckpt).map_err(err)?;
    ensure(loaded == params, || "checkpoint params differ".into())?;
    ensure(checkpoint::to_bytes(&loaded) == std::fs::read(&ckpt).unwrap(), || "checkpoint bytes differ".into())?;

    let ctx = EncoderContext::new(&vocab, &params).map_err(err)?;
    let (examples, cache) = random_corpus(30, 78);
    let built = build_index(&examples, &cache, &ctx).map_err(err)?;
    let idx_path = dir.path().join("s.cidx");
    index::save_index(&built, &idx_path).map_err(err)?;
    let reloaded = index::load_index(&idx_path).map_err(err)?;
    ensure(reloaded == built, || "index differs after reload".into())?;
    let idx_bytes = std::fs::read(&idx_path).unwrap();
    ensure(index::to_bytes(&reloaded).map_err(err)? == idx_bytes, || "index bytes differ".into())?;

    let ckpt_bytes = std::fs::read(&ckpt).unwrap();
    let mut corrupted = 0;
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for (name, bytes) in [("checkpoint", &ckpt_bytes), ("index", &idx_bytes)] {
        let mut cases: Vec<Vec<u8>> = (0..bytes.len()).step_by(97).map(|cut| bytes[..cut].to_vec()).collect();
        for _ in 0..200 {
            let mut b = bytes.clone();
            let pos = rng.random_range(0..b.len());
            b[pos] ^= 1 << rng.random_range(0..8);
            cases.push(b);
        }
        for case in cases {
            let result = catch_unwind(|| match name {
                "checkpoint" => checkpoint::from_bytes(&case).map(|_| ()),
                _ => index::from_bytes(&case).map(|_| ()),
            })
            .map_err(|_| format!("{name}: panic on corrupted input"))?;
            ensure(matches!(result, Err(Error::Checksum(_))), || {
                format!("{name}: corrupted input gave {result:?}")
            })?;
            corrupted += 1;
        }
    }
    Ok(format!(
        "checkpoint {} B and index {} B round-trip; {corrupted} corruptions rejected",
        ckpt_bytes.len(),
        idx_bytes.len()
    ))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 12] = [
        ("gradient oracle", gradient_oracle),
        ("similarity unit cases", similarity_cases),
        ("loss closed forms", loss_closed_forms),
        ("retrieval oracle", retrieval_oracle),
        ("weighting contract", weighting_contract),
        ("distillation sanity", distillation_sanity),
        ("metric fixtures", metric_fixtures),
        ("prompt byte-exactness", prompt_golden),
        ("end-to-end mock run", end_to_end),
        ("support-size monotonicity", support_monotonicity),
        ("OOD partition", ood_partition),
        ("persistence", persistence),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|_| Err("panicked".into()));
        match outcome {
            Ok(detail) => println!("PASS {:>2} {name}: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {why}", i + 1);
            }
        }
    }
    println!("{}/{} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
