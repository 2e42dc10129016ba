//! Exit criteria. Each check prints one PASS/FAIL line; the test fails if
//! any check fails.

mod common;

use std::path::Path;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use litsearch::bm25::{Analyzer, Bm25Params, Index};
use litsearch::corpus::{Category, CorpusStore, Document, QASample};
use litsearch::datagen::{run_pipeline, FixtureLlm, PipelineConfig, PipelineOutput};
use litsearch::eval::{run_eval, split_report, EvalConfig, EvalMode, ExtractivePolicy, SplitKey};
use litsearch::grpo::{
    compute_advantages, finite_diff_check, grpo_loss_and_grad, DifferentiablePolicy, GradCheckConfig, GroupBatch,
    GrpoConfig, Policy, TabularSoftmaxPolicy,
};
use litsearch::protocol::{loss_mask, MaskedTokens, Trajectory};
use litsearch::retrieval::{CountingRetriever, HttpRetriever, Limits, RetrieveRequest, RunningService, SearchEngine};
use litsearch::reward::{compute_reward, NormalizationConfig};
use litsearch::rollout::toy::{toy_policy, train_toy, PlantedEnv, ToyAgent, ToyTokenizer, ToyTrainConfig, INFO};
use litsearch::rollout::{run_episode, ScriptedPolicy};

use common::*;

type Outcome = Result<String, String>;
type Check = fn() -> Outcome;

fn timed(limit: Duration, started: Instant, detail: String) -> Outcome {
    let elapsed = started.elapsed();
    if elapsed < limit {
        Ok(format!("{detail}; {:.1}s", elapsed.as_secs_f64()))
    } else {
        Err(format!("{detail}; took {:.1}s, limit {}s", elapsed.as_secs_f64(), limit.as_secs()))
    }
}

fn bm25_oracle_equivalence() -> Outcome {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0xB25);
    let mut queries = 0;
    for c in 0..50 {
        let n = rng.random_range(1..=1000);
        let vocab = rng.random_range(5..400);
        let docs = random_corpus(&mut rng, n, 30, vocab);
        let params = Bm25Params::new(rng.random_range(0.0..3.0), rng.random_range(0.0..=1.0)).unwrap();
        let pairs: Vec<(&str, &str)> = docs.iter().map(|(a, b)| (a.as_str(), b.as_str())).collect();
        let index = Index::build(pairs, params, Analyzer::default()).map_err(|e| e.to_string())?;
        let oracle = Bm25Oracle::new(&docs, params.k1, params.b);
        for _ in 0..4 {
            let q = random_query(&mut rng, vocab);
            let k = rng.random_range(1..=20);
            let got: Vec<(String, f64)> = index.search(&q, k).into_iter().map(|h| (h.id, h.score)).collect();
            check_ranking(&got, &oracle.rank(&q), k, 1e-9).map_err(|e| format!("corpus {c}, query {q:?}: {e}"))?;
            queries += 1;
        }
    }
    timed(Duration::from_secs(60), started, format!("50 corpora, {queries} queries match brute force"))
}

fn service_parity() -> Outcome {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5E4);
    let docs = random_corpus(&mut rng, 400, 30, 150);
    let corpus = CorpusStore::from_documents(
        docs.iter().map(|(id, text)| Document::new(id.clone(), format!("title {id}"), text.clone())).collect(),
    )
    .map_err(|e| e.to_string())?;
    let index = Index::from_corpus(&corpus, Bm25Params::default()).map_err(|e| e.to_string())?;
    let engine = Arc::new(SearchEngine::new(index, corpus).map_err(|e| e.to_string())?);
    let service = RunningService::start(engine.clone(), Limits::default(), "127.0.0.1:0").map_err(|e| e.to_string())?;
    let client = HttpRetriever::new(&service.url(), Duration::from_secs(30));
    for r in 0..100 {
        let batch = rng.random_range(1..=32);
        let queries: Vec<String> = (0..batch).map(|_| random_query(&mut rng, 150)).collect();
        let topk = rng.random_range(1..=100);
        let request = RetrieveRequest { queries: queries.clone(), topk: Some(topk), return_scores: true };
        let remote = client.send(&request).map_err(|e| format!("request {r}: {e}"))?;
        if remote.result.len() != queries.len() {
            return Err(format!("request {r}: {} result lists for {} queries", remote.result.len(), queries.len()));
        }
        for (q, hits) in queries.iter().zip(&remote.result) {
            let direct = engine.index().search(q, topk);
            let same = direct.len() == hits.len()
                && direct
                    .iter()
                    .zip(hits)
                    .all(|(d, h)| d.id == h.document.id && h.score.map(f64::to_bits) == Some(d.score.to_bits()));
            if !same {
                return Err(format!("request {r}, query {q:?}: service result differs from index search"));
            }
        }
    }
    timed(Duration::from_secs(30), started, "100 batched requests bit-identical".into())
}

fn reward_oracle_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x4E3);
    let cfg = NormalizationConfig::default();
    let words = ["RB1", "gene", "HBB", "Duloxetine", "kidney", "C-III", "apoC-III", "APOC3", "c3"];
    let fillers = ["the", "The", "a", "An", "THE"];
    let mut agree = 0;
    let mut correct = 0;
    for case in 0..500 {
        let mut golden: Vec<String> = if case % 5 == 0 {
            apoc3_family()
        } else {
            (0..rng.random_range(1..4)).map(|_| words[rng.random_range(0..words.len())].to_string()).collect()
        };
        golden.dedup();
        let base = if rng.random_bool(0.5) {
            golden[rng.random_range(0..golden.len())].clone()
        } else {
            words[rng.random_range(0..words.len())].to_string()
        };
        let mut pred = String::new();
        if rng.random_bool(0.3) {
            pred += fillers[rng.random_range(0..fillers.len())];
            pred += " ";
        }
        for (i, w) in base.split(' ').enumerate() {
            if i > 0 {
                pred += if rng.random_bool(0.5) { "  " } else { " " };
            }
            pred += &match rng.random_range(0..3) {
                0 => w.to_uppercase(),
                1 => w.to_lowercase(),
                _ => w.to_string(),
            };
        }
        if rng.random_bool(0.2) {
            pred += if rng.random_bool(0.5) { "." } else { " \t" };
        }
        let sample = QASample {
            id: format!("r{case}"),
            question: "q?".into(),
            golden_answers: golden.clone(),
            category: Category::GeneticMutations,
            source_doc_id: "d".into(),
            paraphrased: false,
        };
        let mut traj = Trajectory::start("q?").map_err(|e| e.to_string())?;
        traj.push_generated(format!("<think>x</think>\n<answer>{pred}</answer>"));
        let got = compute_reward(&traj, &sample, &cfg).reward;
        let want = oracle_grade(&pred, &golden);
        if got != want {
            return Err(format!("case {case}: {pred:?} vs {golden:?}: reward {got}, oracle {want}"));
        }
        agree += 1;
        correct += want as usize;
    }
    for variant in apoc3_family() {
        let mut traj = Trajectory::start("q?").map_err(|e| e.to_string())?;
        traj.push_generated(format!("<answer> {variant} </answer>"));
        let sample = QASample {
            id: "apoc3".into(),
            question: "q?".into(),
            golden_answers: apoc3_family(),
            category: Category::GeneticMutations,
            source_doc_id: "d".into(),
            paraphrased: false,
        };
        if compute_reward(&traj, &sample, &cfg).reward != 1.0 {
            return Err(format!("APOC3 synonym {variant:?} not accepted"));
        }
    }
    Ok(format!("{agree}/500 agree ({correct} correct), APOC3 family accepted"))
}

fn random_batch(rng: &mut ChaCha8Rng, g: usize) -> GroupBatch {
    let sequences = (0..g)
        .map(|_| {
            let len = rng.random_range(3..12);
            let tokens: Vec<u32> = (0..len).map(|_| rng.random_range(0..8)).collect();
            let mut mask: Vec<u8> = (0..len).map(|t| u8::from(t > 0 && rng.random_bool(0.7))).collect();
            mask[len - 1] = 1;
            MaskedTokens { tokens, mask }
        })
        .collect();
    let rewards = (0..g).map(|_| if rng.random_bool(0.5) { 1.0 } else { rng.random_range(0.0..1.0) }).collect();
    GroupBatch::new("q", sequences, rewards, 1e-6).unwrap()
}

fn gradient_check() -> Outcome {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0x6C);
    let mut worst = 0.0f64;
    let mut configs = 0;
    for rep in 0..2 {
        for clip_eps in [0.1, 0.2] {
            for kl_coeff in [0.0, 1e-2] {
                for g in [2, 4, 8] {
                    let context_len = rng.random_range(1..=3);
                    let buckets = rng.random_range(8..=125);
                    let fresh = |rng: &mut ChaCha8Rng| {
                        TabularSoftmaxPolicy::new(8, 8, context_len, buckets).randomized(1.0, rng)
                    };
                    let new = fresh(&mut rng);
                    if new.num_params() > 1000 {
                        return Err(format!("policy has {} parameters", new.num_params()));
                    }
                    let mut old = new.clone();
                    for p in old.params_mut() {
                        *p += rng.random_range(-0.3..0.3);
                    }
                    let reference = fresh(&mut rng);
                    let batches: Vec<GroupBatch> = (0..2).map(|_| random_batch(&mut rng, g)).collect();
                    let cfg = GrpoConfig { group_size: g, clip_eps, kl_coeff, adv_eps: 1e-6 };
                    let report = finite_diff_check(
                        &new,
                        |p| grpo_loss_and_grad(&batches, p, &old, &reference, &cfg),
                        &GradCheckConfig { seed: rep, ..GradCheckConfig::default() },
                    )
                    .map_err(|e| e.to_string())?;
                    if report.max_rel_error >= 1e-4 {
                        return Err(format!(
                            "eps={clip_eps} beta={kl_coeff} G={g}: max relative error {:.3e} at param {:?}",
                            report.max_rel_error, report.worst_param
                        ));
                    }
                    worst = worst.max(report.max_rel_error);
                    configs += 1;
                }
            }
        }
    }
    timed(Duration::from_secs(120), started, format!("{configs} configs, max relative error {worst:.2e}"))
}

fn advantage_properties() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0xAD);
    let adv_eps = 1e-6;
    let (mut normalized, mut uniform) = (0, 0);
    for i in 0..1000 {
        let g = rng.random_range(2..=16);
        let rewards: Vec<f64> = match i % 4 {
            0 => (0..g).map(|_| f64::from(u8::from(rng.random_bool(0.5)))).collect(),
            1 => vec![rng.random_range(-5.0..5.0); g],
            _ => (0..g).map(|_| rng.random_range(-5.0..5.0)).collect(),
        };
        let adv = compute_advantages(&rewards, adv_eps).map_err(|e| e.to_string())?;
        let n = g as f64;
        let mean = rewards.iter().sum::<f64>() / n;
        let std = (rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n).sqrt();
        if rewards.iter().all(|&r| r == rewards[0]) {
            if adv.iter().any(|&a| a != 0.0) {
                return Err(format!("uniform group {rewards:?} gave {adv:?}"));
            }
            uniform += 1;
        } else if std >= adv_eps {
            let m = adv.iter().sum::<f64>() / n;
            let s = (adv.iter().map(|a| (a - m).powi(2)).sum::<f64>() / n).sqrt();
            if m.abs() >= 1e-12 || (s - 1.0).abs() >= 1e-9 {
                return Err(format!("group {i}: mean {m:e}, std {s}"));
            }
            normalized += 1;
        }
    }
    // Shift and scale on inputs where every step is exact in binary floating
    // point: small integer rewards, power-of-two group sizes and scales.
    for i in 0..1000 {
        let g = [2usize, 4, 8][i % 3];
        let rewards: Vec<f64> = (0..g).map(|_| f64::from(rng.random_range(0u8..5))).collect();
        let shift = f64::from(rng.random_range(-8i32..=8));
        let scale = 2f64.powi(rng.random_range(-4..=4));
        let moved: Vec<f64> = rewards.iter().map(|r| r * scale + shift).collect();
        let a = compute_advantages(&rewards, adv_eps).map_err(|e| e.to_string())?;
        let b = compute_advantages(&moved, adv_eps).map_err(|e| e.to_string())?;
        if a != b {
            return Err(format!("{rewards:?} vs {moved:?}: {a:?} != {b:?}"));
        }
    }
    Ok(format!("{normalized} standardized, {uniform} uniform zeroed, 1000 shift/scale cases exact"))
}

/// Adds noise to log-probabilities and their gradients on INFO tokens.
#[derive(Clone)]
struct NoisyOnInjected {
    inner: TabularSoftmaxPolicy,
    seed: u64,
}

impl NoisyOnInjected {
    fn noise(&self, tokens: &[u32], pos: usize) -> f64 {
        if tokens[pos] != INFO {
            return 0.0;
        }
        let mut rng =
            ChaCha8Rng::seed_from_u64(self.seed ^ (pos as u64).wrapping_mul(0x9E37_79B9) ^ tokens.len() as u64);
        rng.random_range(-5.0..5.0)
    }
}

impl Policy for NoisyOnInjected {
    fn num_actions(&self) -> usize {
        self.inner.num_actions()
    }
    fn action_log_probs(&self, context: &[u32]) -> Vec<f64> {
        self.inner.action_log_probs(context)
    }
    fn log_prob(&self, tokens: &[u32], pos: usize) -> f64 {
        let n = self.noise(tokens, pos);
        if n == 0.0 {
            self.inner.log_prob(tokens, pos)
        } else {
            n
        }
    }
}

impl DifferentiablePolicy for NoisyOnInjected {
    fn params(&self) -> &[f64] {
        self.inner.params()
    }
    fn params_mut(&mut self) -> &mut [f64] {
        self.inner.params_mut()
    }
    fn accumulate_grad_log_prob(&self, tokens: &[u32], pos: usize, scale: f64, grad: &mut [f64]) {
        self.inner.accumulate_grad_log_prob(tokens, pos, scale, grad);
        let n = self.noise(tokens, pos);
        if n != 0.0 {
            grad.iter_mut().for_each(|g| *g += n);
        }
    }
}

fn mask_correctness() -> Outcome {
    let env = PlantedEnv::generate(20, 40, 17);
    let engine = env.engine();
    let config = ToyTrainConfig::default().rollout;
    let mut rng = ChaCha8Rng::seed_from_u64(0x3A5C);
    let sampler = toy_policy(2).randomized(0.5, &mut rng);
    let agent = ToyAgent::new(&sampler);
    let mut sequences = Vec::new();
    let mut injected = 0;
    let mut attempt = 0u64;
    while sequences.len() < 100 {
        attempt += 1;
        if attempt > 100_000 {
            return Err("could not sample 100 trajectories with retrievals".into());
        }
        let sample = &env.dataset[rng.random_range(0..env.dataset.len())];
        let ep = run_episode(&agent, &engine, sample, &config, attempt);
        if ep.retrievals.is_empty() {
            continue;
        }
        let Ok(seq) = loss_mask(&ep.trajectory, &ToyTokenizer) else { continue };
        for (t, &tok) in seq.tokens.iter().enumerate() {
            if tok == INFO {
                if seq.mask[t] != 0 {
                    return Err("injected token inside the loss mask".into());
                }
                injected += 1;
            }
        }
        sequences.push(seq);
    }
    let mut checked = 0;
    for (i, chunk) in sequences.chunks(4).enumerate() {
        let rewards: Vec<f64> = (0..chunk.len()).map(|_| f64::from(u8::from(rng.random_bool(0.5)))).collect();
        let batch = GroupBatch::new("q", chunk.to_vec(), rewards, 1e-6).map_err(|e| e.to_string())?;
        let new = toy_policy(2).randomized(0.5, &mut rng);
        let old = toy_policy(2).randomized(0.5, &mut rng);
        let reference = toy_policy(2).randomized(0.5, &mut rng);
        let cfg = GrpoConfig { group_size: chunk.len(), clip_eps: 0.2, kl_coeff: 1e-2, adv_eps: 1e-6 };
        let batches = [batch];
        let clean = grpo_loss_and_grad(&batches, &new, &old, &reference, &cfg).map_err(|e| e.to_string())?;
        let wrap = |p: &TabularSoftmaxPolicy, s: u64| NoisyOnInjected { inner: p.clone(), seed: s };
        let perturbed = grpo_loss_and_grad(&batches, &wrap(&new, 1), &wrap(&old, 2), &wrap(&reference, 3), &cfg)
            .map_err(|e| e.to_string())?;
        if clean.0.to_bits() != perturbed.0.to_bits() {
            return Err(format!("group {i}: objective moved by {:e}", perturbed.0 - clean.0));
        }
        if clean.1.iter().zip(&perturbed.1).any(|(a, b)| a.to_bits() != b.to_bits()) {
            return Err(format!("group {i}: gradient changed"));
        }
        checked += chunk.len();
    }
    Ok(format!("{checked} trajectories, {injected} injected tokens perturbed, loss and gradient unchanged"))
}

fn toy_learning() -> Outcome {
    let started = Instant::now();
    let env = PlantedEnv::standard(0);
    if env.corpus.len() != 200 || env.dataset.len() != 50 {
        return Err(format!("environment has {} docs and {} questions", env.corpus.len(), env.dataset.len()));
    }
    let engine = env.engine();
    let config = ToyTrainConfig::default();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().map_err(|e| e.to_string())?;
    let train = || pool.install(|| train_toy(toy_policy(2), &env.dataset, &engine, &config, 300, 7));
    let (policy, report) = train().map_err(|e| e.to_string())?;
    let elapsed_one = started.elapsed();
    let (policy_again, report_again) = train().map_err(|e| e.to_string())?;
    let deterministic = report == report_again && policy == policy_again;
    let detail = format!(
        "baseline {:.3}, after 300 steps {:.3}, deterministic {deterministic}, one run {:.1}s",
        report.initial_reward,
        report.final_reward,
        elapsed_one.as_secs_f64()
    );
    if report.initial_reward < 0.2
        && report.final_reward > 0.8
        && deterministic
        && elapsed_one < Duration::from_secs(600)
    {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn pipeline_fidelity() -> Outcome {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/datagen");
    let corpus = CorpusStore::read_jsonl(&dir.join("abstracts.jsonl")).map_err(|e| e.to_string())?;
    let llm = FixtureLlm::load(&dir.join("completions.jsonl")).map_err(|e| e.to_string())?;
    let run = |max_in_flight| -> Result<PipelineOutput, String> {
        run_pipeline(&corpus, 10, &llm, &PipelineConfig { seed: 42, max_in_flight, ..PipelineConfig::default() })
            .map_err(|e| e.to_string())
    };
    let out = run(4)?;
    if out.stats.candidates_per_abstract.len() != 10 || out.stats.candidates_per_abstract.iter().any(|(_, n)| *n != 3) {
        return Err(format!("candidates per abstract {:?}", out.stats.candidates_per_abstract));
    }
    let mut this_study = 0;
    for r in &out.records {
        let hit = |q: &str| q.to_lowercase().contains("this study");
        if hit(&r.original_question) || hit(&r.question) {
            this_study += 1;
            if r.accepted {
                return Err(format!("{} mentions \"this study\" but was accepted", r.sample_id));
            }
        }
    }
    if this_study == 0 {
        return Err("fixture has no \"this study\" questions".into());
    }
    let mut flagged = 0;
    let mut overlapping_rewrites = 0;
    for r in &out.records {
        if r.paraphrase_attempted && r.question == r.original_question && r.paraphrase_rejection.is_some() {
            overlapping_rewrites += 1;
        }
    }
    for s in &out.dataset {
        if !s.paraphrased {
            continue;
        }
        let r = out.records.iter().find(|r| r.sample_id == s.id).ok_or(format!("no record for {}", s.id))?;
        if s.question == r.original_question || shares_trigram(&s.question, &r.original_question) {
            return Err(format!("{} flagged paraphrased but shares a 3-gram with the original", s.id));
        }
        flagged += 1;
    }
    if flagged == 0 || overlapping_rewrites == 0 {
        return Err(format!("{flagged} flagged, {overlapping_rewrites} rejected rewrites; fixture must exercise both"));
    }

    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    out.write(&a).map_err(|e| e.to_string())?;
    run(1)?.write(&b).map_err(|e| e.to_string())?;
    for f in ["dataset.jsonl", "records.jsonl", "diagnostics.jsonl", "stats.json"] {
        if std::fs::read(a.join(f)).ok() != std::fs::read(b.join(f)).ok() {
            return Err(format!("{f} differs between runs"));
        }
    }
    Ok(format!(
        "30 candidates over 10 abstracts, {this_study} \"this study\" rejected, {flagged} paraphrased disjoint, \
         {overlapping_rewrites} overlapping rewrites unflagged, byte-identical reruns"
    ))
}

fn harness_arithmetic() -> Outcome {
    let mut env = PlantedEnv::generate(40, 60, 11);
    if env.dataset.len() != 40 {
        return Err(format!("fixture has {} samples", env.dataset.len()));
    }
    for (i, s) in env.dataset.iter_mut().enumerate() {
        s.paraphrased = i % 3 == 0;
    }
    let engine = CountingRetriever::new(env.engine());
    let config = EvalConfig { topk: Some(3), ..EvalConfig::default() };

    // Knows the answer to every question whose planted entity sorts before
    // the midpoint, and answers "unknown" otherwise.
    let mut known: Vec<(String, String)> =
        env.dataset.iter().map(|s| (s.question.clone(), s.golden_answers[0].clone())).collect();
    known.sort_by(|a, b| a.1.cmp(&b.1));
    known.truncate(17);
    let table = known.clone();
    let partial = ScriptedPolicy::new(move |req| {
        let answer = table.iter().find(|(q, _)| req.prompt.contains(q.as_str())).map_or("unknown", |(_, a)| a);
        format!("<answer> {answer} </answer>")
    });
    let expected = known.len() as f64 / 40.0;

    for mode in [EvalMode::Direct, EvalMode::Cot] {
        let report = run_eval(mode, &env.dataset, &partial, &engine, &config, 3).map_err(|e| e.to_string())?;
        let hand: f64 =
            env.dataset.iter().map(|s| f64::from(u8::from(known.iter().any(|(q, _)| *q == s.question)))).sum::<f64>()
                / 40.0;
        if report.accuracy != expected || report.accuracy != hand {
            return Err(format!("{mode}: accuracy {} vs hand-computed {hand}", report.accuracy));
        }
        for key in [SplitKey::Category, SplitKey::Paraphrased] {
            let t = split_report(&report, key);
            if (t.reaggregate() - report.accuracy).abs() > 1e-12 {
                return Err(format!("{mode}: {key:?} split re-aggregates to {}", t.reaggregate()));
            }
        }
    }
    if engine.calls() != 0 {
        return Err(format!("direct/cot made {} retrieval calls", engine.calls()));
    }
    let rag = run_eval(EvalMode::Rag, &env.dataset, &ExtractivePolicy::default(), &engine, &config, 3)
        .map_err(|e| e.to_string())?;
    if rag.accuracy != 1.0 {
        return Err(format!("extractive rag accuracy {}", rag.accuracy));
    }
    Ok(format!("accuracy {expected} matches hand count, splits re-aggregate, 0 direct retrievals, rag 1.0"))
}

#[test]
fn acceptance() {
    let checks: [(&str, Check); 9] = [
        ("bm25 oracle equivalence", bm25_oracle_equivalence),
        ("retrieval service parity", service_parity),
        ("reward oracle equivalence", reward_oracle_equivalence),
        ("grpo gradient check", gradient_check),
        ("advantage properties", advantage_properties),
        ("mask correctness", mask_correctness),
        ("toy end-to-end learning", toy_learning),
        ("pipeline fidelity", pipeline_fidelity),
        ("harness arithmetic", harness_arithmetic),
    ];
    let mut failed = Vec::new();
    for (name, check) in checks {
        match check() {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(detail) => {
                println!("FAIL  {name}: {detail}");
                failed.push(name);
            }
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
