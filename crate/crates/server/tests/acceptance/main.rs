//! Acceptance checks for the dialogue engine. Each check prints one
//! PASS/FAIL line; the process exits nonzero if any check fails.
//!
//! Expected values come from oracles written here, independently of the
//! library: a tuple-based merge, an exhaustive cosine scan, sentence lists
//! assembled before they are joined, and hand-tallied annotation counts.

#[path = "../common/mod.rs"]
mod common;

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use mi_dialogue::analyzer::{
    average_buckets, bucket_question_ratios, compute_miti_metrics, compute_question_analysis, load_annotations,
    AnalyzerConfig, SessionAnnotation,
};
use mi_dialogue::baselines::{default_fs_samples, MiFewShot, MiGuide};
use mi_dialogue::decider::{retrieve, DeciderError, StrategyDecider};
use mi_dialogue::embedding::{EmbeddingProvider, HashedNgramEmbedder};
use mi_dialogue::generator::{split_sentences, ResponseGenerator, EMPHASIZE_DIRECTIVE, MAX_SENTENCES, SEEK_DIRECTIVE};
use mi_dialogue::llm::{
    ChatResponse, Gateway, GatewayError, RecordingProvider, ReplayProvider, ReplayStore, ScriptedProvider,
};
use mi_dialogue::model::{
    DialogueState, DialogueStrategy, Frame, FrameRef, FrameType, Intent, SchemaRegistry, Speaker, Utterance,
};
use mi_dialogue::pool::{SampleSource, StrategyPool, StrategySample};
use mi_dialogue::tracker::{merge, StateTracker};

use mi_dialogue_server::engine::Engine;
use mi_dialogue_server::session::SessionManager;

use common::{build_sample_pool, config_with_pool, fixture, gateway, last_client_line, scripted};

type Outcome = Result<String, String>;
type Check = fn() -> Outcome;
type GatewayFactory = dyn Fn() -> Result<Gateway, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        let ok: bool = $cond;
        if !ok {
            return Err(format!($($fmt)+));
        }
    };
}

fn main() {
    let checks: [(&str, Check); 10] = [
        ("merge invariants", merge_invariants),
        ("goal/problem walkthrough under replay", walkthrough_replay),
        ("retrieval matches exhaustive scan", retrieval_oracle),
        ("strategy validity", strategy_validity),
        ("response priority rule", priority_rule),
        ("two-sentence limit", two_sentence_limit),
        ("analyzer metrics", analyzer_oracle),
        ("pool build determinism", pool_determinism),
        ("end-to-end session replay", end_to_end),
        ("baseline prompt conformance", baseline_conformance),
    ];
    let mut failed = 0;
    for (i, (name, check)) in checks.iter().enumerate() {
        let started = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            Err(format!("panicked: {msg}"))
        });
        let ms = started.elapsed().as_millis();
        match outcome {
            Ok(detail) => println!("PASS C{:<2} {name} ({detail}; {ms} ms)", i + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL C{:<2} {name}: {why}", i + 1);
            }
        }
    }
    println!("{} of {} acceptance checks passed", checks.len() - failed, checks.len());
    if failed > 0 {
        std::process::exit(1);
    }
}

// ---------------------------------------------------------------------------
// C1

const MERGE_PAIRS: usize = 1000;
const MERGE_BUDGET: Duration = Duration::from_secs(10);

type OracleFrame = (String, String, BTreeMap<String, String>);

fn oracle_norm(s: &str) -> String {
    let mut out = String::new();
    for word in s.split_whitespace() {
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(&word.to_lowercase());
    }
    out
}

/// Fold `incoming` into `list` by (type, normalized content); first
/// occurrence keeps its position and text, incoming attributes overwrite.
fn oracle_absorb(list: &mut Vec<OracleFrame>, incoming: &OracleFrame) {
    let key = (incoming.0.clone(), oracle_norm(&incoming.1));
    match list.iter_mut().find(|f| (f.0.clone(), oracle_norm(&f.1)) == key) {
        Some(existing) => {
            for (k, v) in &incoming.2 {
                existing.2.insert(k.clone(), v.clone());
            }
        }
        None => list.push(incoming.clone()),
    }
}

fn oracle_merge(prev: &[OracleFrame], generated: &[OracleFrame]) -> Vec<OracleFrame> {
    let mut out = prev.to_vec();
    for g in generated {
        oracle_absorb(&mut out, g);
    }
    out
}

fn to_oracle(state: &DialogueState) -> Vec<OracleFrame> {
    state
        .frames()
        .iter()
        .map(|f| {
            let attrs = f.set_attributes().map(|(k, v)| (k.to_string(), v.to_string())).collect();
            (f.frame_type.as_str().to_string(), f.content().to_string(), attrs)
        })
        .collect()
}

fn random_frames(rng: &mut ChaCha8Rng) -> Vec<Frame> {
    const CONTENTS: [&str; 6] = ["lose weight", "Lose  Weight", "eat too much", "EAT too much ", "skip breakfast", "walk daily"];
    let n = rng.random_range(0..=6);
    (0..n)
        .map(|_| {
            let ft = *FrameType::ALL.choose(rng).unwrap();
            let mut f = Frame::new(ft, *CONTENTS.choose(rng).unwrap()).unwrap();
            let declared: &[&str] = match ft {
                FrameType::Goal => &[],
                FrameType::Problem => &["detail", "harm_effect", "necessity_to_improve"],
                FrameType::Experience => &["detail", "effect"],
                FrameType::Plan => &["detail"],
            };
            for attr in declared {
                if rng.random_bool(0.4) {
                    f.set_attribute(*attr, format!("v{}", rng.random_range(0..3)));
                }
            }
            f
        })
        .collect()
}

fn merge_invariants() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0001);
    let started = Instant::now();
    let mut matched = 0usize;
    for case in 0..MERGE_PAIRS {
        let prev = DialogueState::from_frames(random_frames(&mut rng));
        let generated = DialogueState::from_frames(random_frames(&mut rng));
        let merged = merge(&prev, &generated);

        // Retention: previous frames form an ordered prefix, same identities.
        ensure!(merged.len() >= prev.len(), "case {case}: merge lost frames");
        for (p, m) in prev.frames().iter().zip(merged.frames()) {
            ensure!(
                p.frame_type == m.frame_type && p.content() == m.content(),
                "case {case}: previous frame `{}` moved or changed identity",
                p.content()
            );
        }
        // Idempotence.
        ensure!(merge(&merged, &generated) == merged, "case {case}: merge is not idempotent");
        // Identity.
        ensure!(merge(&prev, &DialogueState::new()) == prev, "case {case}: empty update changed state");
        // No duplicate identities.
        let mut keys: Vec<(String, String)> = to_oracle(&merged).iter().map(|f| (f.0.clone(), oracle_norm(&f.1))).collect();
        let n = keys.len();
        keys.sort();
        keys.dedup();
        ensure!(keys.len() == n, "case {case}: duplicate frame identities after merge");
        // Exact agreement with the oracle.
        let expected = oracle_merge(&to_oracle(&prev), &to_oracle(&generated));
        ensure!(to_oracle(&merged) == expected, "case {case}: merge differs from oracle");
        matched += usize::from(merged.len() > prev.len());
    }
    let elapsed = started.elapsed();
    ensure!(elapsed < MERGE_BUDGET, "took {elapsed:?}, budget {MERGE_BUDGET:?}");
    Ok(format!("{MERGE_PAIRS} pairs, {matched} grew the state"))
}

// ---------------------------------------------------------------------------
// C2

fn walkthrough_script(req: &mi_dialogue::llm::ChatRequest) -> Result<ChatResponse, GatewayError> {
    let frames = match last_client_line(req).as_deref() {
        Some("I want to lose weight") => json!([{ "frame_type": "goal", "content": "lose weight" }]),
        Some("I eat too much") => json!([
            { "frame_type": "goal", "content": "Lose  weight" },
            { "frame_type": "problem", "content": "eat too much" }
        ]),
        Some("I feel like I'm not getting enough exercise") => {
            json!([{ "frame_type": "problem", "content": "not getting enough exercise" }])
        }
        other => return Err(GatewayError::InvalidRequest(format!("unscripted utterance {other:?}"))),
    };
    Ok(ChatResponse::structured(json!({ "frames": frames })))
}

fn run_walkthrough(gateway: Gateway) -> Result<DialogueState, String> {
    let tracker = StateTracker::with_defaults(gateway, SchemaRegistry::default()).map_err(|e| e.to_string())?;
    let turns = [
        (Speaker::Client, "I want to lose weight"),
        (Speaker::Counselor, "What makes that important to you?"),
        (Speaker::Client, "I eat too much"),
        (Speaker::Counselor, "Eating feels hard to control."),
        (Speaker::Client, "I feel like I'm not getting enough exercise"),
    ];
    let mut history = Vec::new();
    let mut state = DialogueState::new();
    for (i, (speaker, text)) in turns.iter().enumerate() {
        history.push(Utterance::new(*speaker, *text, i as u32).unwrap());
        if *speaker == Speaker::Client {
            state = tracker.update_state(&history, &state).map_err(|e| e.to_string())?.state;
        }
    }
    Ok(state)
}

fn walkthrough_replay() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let file = dir.path().join("walkthrough.replay.jsonl");
    let store = ReplayStore::open(&file).map_err(|e| e.to_string())?;
    let recorded = run_walkthrough(gateway(RecordingProvider::new(ScriptedProvider::new(walkthrough_script), store)))?;
    let replayed = run_walkthrough(gateway(ReplayProvider::open(&file).map_err(|e| e.to_string())?))?;
    ensure!(replayed == recorded, "replayed state differs from recorded state");
    let counts: Vec<usize> = FrameType::ALL.iter().map(|ft| replayed.count_of(*ft)).collect();
    ensure!(counts == [1, 2, 0, 0], "frame counts goal/problem/experience/plan = {counts:?}, want [1, 2, 0, 0]");
    let problems: Vec<&str> = replayed
        .frames()
        .iter()
        .filter(|f| f.frame_type == FrameType::Problem)
        .map(|f| f.content())
        .collect();
    ensure!(
        problems == ["eat too much", "not getting enough exercise"],
        "problem frames {problems:?}"
    );
    Ok("1 goal + 2 problem frames".into())
}

// ---------------------------------------------------------------------------
// C3

const POOL_SIZE: usize = 50;
const DUPLICATES: usize = 10;
const QUERIES: usize = 100;
const TOP_N: usize = 5;
const RETRIEVAL_BUDGET: Duration = Duration::from_secs(5);
const SIM_TOL: f64 = 1e-12;

const CLIENT_LINES: [&str; 12] = [
    "I snack at night",
    "I want to lose weight",
    "I eat too much rice",
    "I skip breakfast",
    "I tried a smaller plate",
    "I drink soda at work",
    "My doctor is worried",
    "I will cook at home",
    "Takeout is easier",
    "I feel tired after lunch",
    "I started walking",
    "Sweets calm me down",
];

fn random_state(rng: &mut ChaCha8Rng) -> DialogueState {
    let mut frames = Vec::new();
    for ft in FrameType::ALL {
        for _ in 0..rng.random_range(0..=2) {
            frames.push(Frame::new(ft, *CLIENT_LINES.choose(rng).unwrap()).unwrap());
        }
    }
    DialogueState::from_frames(frames)
}

fn random_history(rng: &mut ChaCha8Rng) -> Vec<Utterance> {
    let len: u32 = rng.random_range(1..=3) * 2 - 1;
    (0..len)
        .map(|i| {
            let speaker = if (len - 1 - i).is_multiple_of(2) { Speaker::Client } else { Speaker::Counselor };
            Utterance::new(speaker, *CLIENT_LINES.choose(rng).unwrap(), i).unwrap()
        })
        .collect()
}

fn synthetic_pool(rng: &mut ChaCha8Rng, embedder: &HashedNgramEmbedder) -> StrategyPool {
    let mut samples: Vec<StrategySample> = Vec::new();
    for i in 0..POOL_SIZE {
        let (history, state) = if i >= POOL_SIZE - DUPLICATES {
            let src = &samples[rng.random_range(0..POOL_SIZE - DUPLICATES)];
            (src.history.clone(), src.state.clone())
        } else {
            (random_history(rng), random_state(rng))
        };
        let embedding = embedder.embed(&oracle_retrieval_text(&state, &history)).unwrap();
        samples.push(StrategySample {
            source: SampleSource {
                dialogue_id: format!("syn{:02}", rng.random_range(0..20)),
                turn_index: i as u32,
            },
            history,
            state,
            strategy: DialogueStrategy::new(Intent::ALL[i % Intent::ALL.len()]),
            counselor_response: "Tell me more about that.".into(),
            embedding,
        });
    }
    samples.shuffle(rng);
    StrategyPool::new(embedder.fingerprint(), embedder.dim(), samples)
}

fn oracle_retrieval_text(state: &DialogueState, history: &[Utterance]) -> String {
    let lines: Vec<String> = history
        .iter()
        .map(|u| format!("{}: {}", if u.speaker == Speaker::Client { "Client" } else { "Counselor" }, u.text))
        .collect();
    format!(
        "### History\n{}\n\n### Dialogue_State\n{}",
        lines.join("\n"),
        state.to_canonical_json()
    )
}

fn oracle_cosine(a: &[f64], b: &[f64]) -> f64 {
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for (x, y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    (dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0)
}

fn retrieval_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0003);
    let embedder = HashedNgramEmbedder::default();
    let pool = synthetic_pool(&mut rng, &embedder);
    let started = Instant::now();
    let mut ties = 0usize;
    for q in 0..QUERIES {
        let (history, state) = if q % 3 == 0 {
            let s = pool.samples.choose(&mut rng).unwrap();
            (s.history.clone(), s.state.clone())
        } else {
            (random_history(&mut rng), random_state(&mut rng))
        };
        let got = retrieve(&state, &history, &pool, TOP_N, &embedder).map_err(|e| e.to_string())?;

        let query = embedder.embed(&oracle_retrieval_text(&state, &history)).unwrap();
        let mut scan: Vec<(f64, &SampleSource)> = pool
            .samples
            .iter()
            .map(|s| (oracle_cosine(query.as_slice(), s.embedding.as_slice()), &s.source))
            .collect();
        scan.sort_by(|a, b| {
            b.0.partial_cmp(&a.0)
                .unwrap()
                .then_with(|| (&a.1.dialogue_id, a.1.turn_index).cmp(&(&b.1.dialogue_id, b.1.turn_index)))
        });
        scan.truncate(TOP_N);
        ties += scan.windows(2).filter(|w| w[0].0 == w[1].0).count();

        ensure!(got.len() == scan.len(), "query {q}: {} results, oracle {}", got.len(), scan.len());
        for (rank, (g, (sim, src))) in got.iter().zip(&scan).enumerate() {
            ensure!(
                &g.sample.source == *src,
                "query {q} rank {rank}: got {:?}, oracle {:?}",
                g.sample.source,
                src
            );
            ensure!(
                (g.similarity - sim).abs() <= SIM_TOL,
                "query {q} rank {rank}: similarity {} vs oracle {sim}",
                g.similarity
            );
        }
    }
    let elapsed = started.elapsed();
    ensure!(elapsed < RETRIEVAL_BUDGET, "took {elapsed:?}, budget {RETRIEVAL_BUDGET:?}");
    ensure!(ties > 0, "fixture produced no exact ties");
    Ok(format!("{QUERIES} queries, {ties} tied adjacent ranks"))
}

// ---------------------------------------------------------------------------
// C4

const STRATEGY_CALLS: usize = 200;

/// Malformed outputs the decider must repair into a valid strategy.
fn repairable_outputs() -> Vec<Value> {
    vec![
        json!({"intent": "question", "focuses": [{"frame_type": "problem", "index": 9}]}),
        json!({"intent": "question", "focuses": [{"frame_type": "problem", "index": 0}]}),
        json!({"intent": "reflection", "focuses": [{"frame_type": "goal", "index": 1, "frame_attribute": "harm_effect"}]}),
        json!({"intent": "question", "focuses": [], "seek_frame_type": "feeling"}),
        json!({"intent": "question", "focuses": [], "seek_frame_type": "problem", "seek_attribute": "colour"}),
        json!({"intent": "other", "focuses": [], "seek_attribute": "effect"}),
        json!({"intent": "affirmation", "focuses": [{"frame_type": "emotion", "index": 1}]}),
        json!({"intent": "summarization", "focuses": [{"frame_type": "goal", "index": 1}, {"frame_type": "goal", "index": 1}]}),
        json!({"intent": "question", "focuses": [], "seek_frame_type": "none", "seek_attribute": "None"}),
        json!({"intent": "question", "focuses": [], "seek_frame_type": null, "seek_attribute": null}),
        json!({"intent": "question", "focuses": [{"frame_type": "goal", "index": 1, "frame_attribute": "detail"}]}),
        json!({"intent": "question", "focuses": [{"frame_type": "plan", "index": -1}]}),
        json!({"intent": "reflection", "focuses": [{"frame_type": "experience", "index": 4, "frame_attribute": "effect"}]}),
    ]
}

/// Outputs no repair can fix: the intent is missing or unknown, or the
/// value breaks the output schema (wrong types, missing or unknown keys).
fn unrepairable_outputs() -> Vec<ChatResponse> {
    vec![
        ChatResponse::structured(json!({"focuses": []})),
        ChatResponse::structured(json!({"intent": "lecture", "focuses": []})),
        ChatResponse::text("I would ask an open question here."),
        ChatResponse::structured(json!({"intent": "other", "focuses": [], "confidence": 0.9})),
        ChatResponse::structured(json!({"intent": "question"})),
        ChatResponse::structured(json!({"intent": "question", "focuses": ["problem#1"]})),
        ChatResponse::structured(json!({"intent": "question", "focuses": [{"frame_type": "problem", "index": "one"}]})),
    ]
}

fn well_formed_output(rng: &mut ChaCha8Rng, state: &DialogueState) -> Value {
    let intent = Intent::ALL.choose(rng).unwrap().as_str();
    let mut focuses = Vec::new();
    for (ft, idx, _) in state.addressed() {
        if rng.random_bool(0.3) {
            focuses.push(json!({"frame_type": ft.as_str(), "index": idx}));
        }
    }
    let seek = [
        (None, None),
        (Some("experience"), Some("effect")),
        (Some("problem"), Some("harm_effect")),
        (Some("plan"), None),
    ];
    let (ft, attr) = *seek.choose(rng).unwrap();
    json!({"intent": intent, "focuses": focuses, "seek_frame_type": ft, "seek_attribute": attr})
}

enum Expect {
    Valid,
    Invalid,
}

fn strategy_validity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0004);
    let embedder = HashedNgramEmbedder::default();
    let registry = SchemaRegistry::default();
    let pool = synthetic_pool(&mut rng, &embedder);

    // Case k is identified by a tag in the client's last utterance.
    let repairable = repairable_outputs();
    let unrepairable = unrepairable_outputs();
    let malformed = repairable.len() + unrepairable.len();
    ensure!(malformed == 20, "fixture has {malformed} malformed outputs, want 20");
    let mut slots: Vec<usize> = (0..STRATEGY_CALLS).collect();
    slots.shuffle(&mut rng);
    let mut plan: BTreeMap<usize, (ChatResponse, Expect)> = BTreeMap::new();
    for (slot, value) in slots.iter().zip(&repairable) {
        plan.insert(*slot, (ChatResponse::structured(value.clone()), Expect::Valid));
    }
    for (slot, resp) in slots[repairable.len()..].iter().zip(&unrepairable) {
        plan.insert(*slot, (resp.clone(), Expect::Invalid));
    }
    let mut cases = Vec::with_capacity(STRATEGY_CALLS);
    for k in 0..STRATEGY_CALLS {
        let state = random_state(&mut rng);
        let mut history = random_history(&mut rng);
        let last = history.last_mut().unwrap();
        last.text = format!("case {k:03}: {}", last.text);
        let (resp, expect) = match plan.remove(&k) {
            Some(p) => p,
            None => (ChatResponse::structured(well_formed_output(&mut rng, &state)), Expect::Valid),
        };
        cases.push((state, history, resp, expect));
    }
    let responses: Vec<ChatResponse> = cases.iter().map(|c| c.2.clone()).collect();
    let script = move |req: &mi_dialogue::llm::ChatRequest| {
        let line = last_client_line(req).ok_or_else(|| GatewayError::InvalidRequest("no client line".into()))?;
        let k: usize = line[5..8].parse().map_err(|_| GatewayError::InvalidRequest(line.clone()))?;
        Ok(responses[k].clone())
    };

    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let file = dir.path().join("strategies.replay.jsonl");
    let store = ReplayStore::open(&file).map_err(|e| e.to_string())?;
    let recorder = StrategyDecider::with_defaults(
        gateway(RecordingProvider::new(ScriptedProvider::new(script), store)),
        registry.clone(),
    );
    for (state, history, _, _) in &cases {
        let _ = recorder.decide_strategy(state, history, &pool, &embedder);
    }

    let decider = StrategyDecider::with_defaults(
        gateway(ReplayProvider::open(&file).map_err(|e| e.to_string())?),
        registry.clone(),
    );
    let (mut valid, mut rejected) = (0, 0);
    for (k, (state, history, _, expect)) in cases.iter().enumerate() {
        match (decider.decide_strategy(state, history, &pool, &embedder), expect) {
            (Ok(d), Expect::Valid) => {
                d.strategy
                    .validate(state, &registry)
                    .map_err(|e| format!("case {k}: returned strategy fails validation: {e}"))?;
                valid += 1;
            }
            (Err(DeciderError::InvalidStrategy(_)), Expect::Invalid) => rejected += 1,
            (Ok(d), Expect::Invalid) => return Err(format!("case {k}: accepted unrepairable output as {:?}", d.strategy)),
            (Err(e), _) => return Err(format!("case {k}: unexpected error {e}")),
        }
    }
    Ok(format!(
        "{STRATEGY_CALLS} calls, {malformed} malformed; {valid} valid, {rejected} rejected as invalid"
    ))
}

// ---------------------------------------------------------------------------
// C5

fn priority_state() -> DialogueState {
    DialogueState::from_frames([
        Frame::new(FrameType::Goal, "lose weight before summer").unwrap(),
        Frame::new(FrameType::Problem, "eats too much rice at dinner")
            .unwrap()
            .with_attr("harm_effect", "sleepy in the evening"),
        Frame::new(FrameType::Experience, "used a smaller bowl").unwrap(),
    ])
}

fn unreachable_gateway() -> Gateway {
    gateway(ScriptedProvider::new(|_| {
        Err(GatewayError::ProviderUnavailable("prompt-only check".into()))
    }))
}

fn priority_rule() -> Outcome {
    let state = priority_state();
    let generator = ResponseGenerator::with_defaults(unreachable_gateway(), SchemaRegistry::default());
    let history = vec![Utterance::client("I eat too much.", 0)];
    let focused = state.frame(FrameType::Problem, 1).unwrap();
    let focused_json = serde_json::to_string(focused).unwrap();
    let mut checked = 0;
    for intent in Intent::ALL {
        for seek in [false, true] {
            let mut strategy = DialogueStrategy::new(intent).with_focus(FrameRef::new(FrameType::Problem, 1));
            if seek {
                strategy = strategy.seeking(Some(FrameType::Experience), Some("effect"));
            }
            let prompt = generator
                .build_request(&strategy, &state, &history)
                .map_err(|e| format!("{intent:?}/seek={seek}: {e}"))?
                .prompt_text();
            let case = format!("{}/seek={seek}", intent.as_str());
            let seeks = matches!(intent, Intent::Question | Intent::Other) && seek;
            ensure!(
                prompt.contains(SEEK_DIRECTIVE) == seeks,
                "{case}: seek directive present={}, want {seeks}",
                prompt.contains(SEEK_DIRECTIVE)
            );
            let emphasizes = matches!(intent, Intent::Reflection | Intent::Summarization);
            ensure!(
                prompt.contains(EMPHASIZE_DIRECTIVE) == emphasizes,
                "{case}: emphasize directive present={}, want {emphasizes}",
                prompt.contains(EMPHASIZE_DIRECTIVE)
            );
            // The state JSON carries the frame once; an inlined focus adds a copy.
            let copies = prompt.matches(&focused_json).count();
            let want = if emphasizes { 2 } else { 1 };
            ensure!(copies == want, "{case}: focused frame appears {copies} time(s), want {want}");
            if emphasizes {
                ensure!(
                    !prompt.contains("\nseek_frame_type: ") && !prompt.contains("\nseek_attribute: "),
                    "{case}: seek fields rendered under the emphasize rule"
                );
            }
            checked += 1;
        }
    }
    Ok(format!("{checked} intent/seek combinations"))
}

// ---------------------------------------------------------------------------
// C6

const COMPLETIONS: usize = 100;

/// Each entry is exactly one sentence.
const SENTENCE_BANK: [&str; 12] = [
    "I hear you.",
    "That sounds hard!",
    "What would help most?",
    "You tried... and it slipped.",
    "Your doctor said \"cut back.\"",
    "That is 3.5 kg in a month.",
    "(You mentioned the gym.)",
    "Really?!",
    "今日は大変でしたね。",
    "So where does that leave you…?",
    "You want change, not perfection.",
    "Let's look at evenings first.",
];

fn two_sentence_limit() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0006);
    let state = priority_state();
    let strategy = DialogueStrategy::new(Intent::Question).seeking(Some(FrameType::Experience), Some("effect"));
    let mut cases = Vec::new();
    for k in 0..COMPLETIONS {
        let n = 1 + k % 6;
        let sentences: Vec<&str> = (0..n).map(|_| *SENTENCE_BANK.choose(&mut rng).unwrap()).collect();
        cases.push((format!("case {k:03}"), sentences));
    }
    let completions: Vec<String> = cases.iter().map(|(_, s)| s.join(" ")).collect();
    let script = move |req: &mi_dialogue::llm::ChatRequest| {
        let line = last_client_line(req).unwrap_or_default();
        let k: usize = line[5..8].parse().map_err(|_| GatewayError::InvalidRequest(line.clone()))?;
        Ok(ChatResponse::text(completions[k].clone()))
    };
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let file = dir.path().join("completions.replay.jsonl");
    let registry = SchemaRegistry::default();
    let recorder = ResponseGenerator::with_defaults(
        gateway(RecordingProvider::new(
            ScriptedProvider::new(script),
            ReplayStore::open(&file).map_err(|e| e.to_string())?,
        )),
        registry.clone(),
    );
    for (tag, _) in &cases {
        recorder
            .generate(&strategy, &state, &[Utterance::client(tag.clone(), 0)])
            .map_err(|e| e.to_string())?;
    }
    let replay = ResponseGenerator::with_defaults(
        gateway(ReplayProvider::open(&file).map_err(|e| e.to_string())?),
        registry,
    );
    let mut truncated = 0;
    for (k, (tag, sentences)) in cases.iter().enumerate() {
        let g = replay
            .generate(&strategy, &state, &[Utterance::client(tag.clone(), 0)])
            .map_err(|e| format!("case {k}: {e}"))?;
        let kept = split_sentences(&g.text).len();
        ensure!(kept <= MAX_SENTENCES, "case {k}: {kept} sentences in `{}`", g.text);
        let expected = sentences[..sentences.len().min(MAX_SENTENCES)].join(" ");
        ensure!(g.text == expected, "case {k}: got `{}`, want `{expected}`", g.text);
        ensure!(g.truncated == (sentences.len() > MAX_SENTENCES), "case {k}: truncated flag {}", g.truncated);
        truncated += usize::from(g.truncated);
    }
    Ok(format!("{COMPLETIONS} completions, {truncated} truncated"))
}

// ---------------------------------------------------------------------------
// C7

const METRIC_TOL: f64 = 1e-12;

/// Hand tally of `annotations.jsonl`: 104 coded sentences over three
/// sessions of 21, 12 and 8 counselor utterances.
mod frozen {
    pub const TOTAL: usize = 104;
    pub const CR: usize = 9;
    pub const SR: usize = 14;
    pub const QUESTIONS: usize = 31;
    pub const NON_ADHERENT: usize = 3;
    pub const NOT_APPLICABLE: usize = 7;
    pub const EV_ELICIT: (usize, usize) = (12, 58);
    pub const PL_ELICIT: (usize, usize) = (4, 17);
    /// (ev questions, pl questions, sentences)
    pub type Bucket = (usize, usize, usize);
    /// Per session, one tuple per bucket.
    pub const BUCKETS: [(&str, &[Bucket]); 3] = [
        ("ann-a", &[(1, 1, 7), (4, 0, 7), (1, 2, 12), (2, 1, 10), (2, 0, 5), (2, 1, 7), (2, 2, 9)]),
        ("ann-b", &[(0, 0, 10), (0, 0, 5), (3, 0, 8), (1, 2, 8)]),
        ("ann-c", &[(0, 0, 5), (0, 0, 8), (0, 0, 3)]),
    ];
}

/// Independent tally straight from the annotation records.
struct Tally {
    total: usize,
    cr: usize,
    sr: usize,
    q: usize,
    non_adherent: usize,
    na: usize,
    ev: (usize, usize),
    pl: (usize, usize),
}

fn category_phase(q: &str) -> Option<&'static str> {
    match q {
        "ev" | "desire" | "ability" | "reason" | "need" | "custom_ev" => Some("ev"),
        "pl" | "commitment" | "activation" | "taking_steps" | "custom_pl" => Some("pl"),
        _ => None,
    }
}

fn category_elicits(q: &str) -> bool {
    !matches!(q, "ev" | "pl" | "other_question")
}

fn tally(sessions: &[SessionAnnotation]) -> Tally {
    let mut t = Tally {
        total: 0,
        cr: 0,
        sr: 0,
        q: 0,
        non_adherent: 0,
        na: 0,
        ev: (0, 0),
        pl: (0, 0),
    };
    for s in sessions.iter().flat_map(|s| &s.sentences) {
        t.total += 1;
        match s.miti.as_str() {
            "complex_reflection" => t.cr += 1,
            "simple_reflection" => t.sr += 1,
            "question" => t.q += 1,
            "persuade" | "confront" => t.non_adherent += 1,
            "not_applicable" => t.na += 1,
            _ => {}
        }
        let cat = s.question.as_deref();
        let phase = s.phase.map(|p| p.as_str()).or_else(|| cat.and_then(category_phase));
        let elicits = cat.is_some_and(|c| category_elicits(c) && category_phase(c) == phase);
        match phase {
            Some("ev") => {
                t.ev.1 += 1;
                t.ev.0 += usize::from(elicits);
            }
            Some("pl") => {
                t.pl.1 += 1;
                t.pl.0 += usize::from(elicits);
            }
            _ => {}
        }
    }
    t
}

fn close(label: &str, got: f64, want: f64) -> Result<(), String> {
    ensure!((got - want).abs() <= METRIC_TOL, "{label}: got {got}, want {want}");
    Ok(())
}

fn frac(n: usize, d: usize) -> f64 {
    n as f64 / d as f64
}

fn analyzer_oracle() -> Outcome {
    let sessions = load_annotations(&fixture("annotations.jsonl")).map_err(|e| e.to_string())?;
    let cfg = AnalyzerConfig::default();
    let t = tally(&sessions);
    let frozen = (
        frozen::TOTAL,
        frozen::CR,
        frozen::SR,
        frozen::QUESTIONS,
        frozen::NON_ADHERENT,
        frozen::NOT_APPLICABLE,
        frozen::EV_ELICIT,
        frozen::PL_ELICIT,
    );
    ensure!(
        frozen == (t.total, t.cr, t.sr, t.q, t.non_adherent, t.na, t.ev, t.pl),
        "independent tally {:?} disagrees with the frozen hand tally {frozen:?}",
        (t.total, t.cr, t.sr, t.q, t.non_adherent, t.na, t.ev, t.pl)
    );

    let miti = compute_miti_metrics(&sessions, &cfg);
    ensure!(miti.total_sentences == frozen::TOTAL, "total sentences {}", miti.total_sentences);
    close("%CR", miti.pct_cr.ok_or("no %CR")?, frac(frozen::CR, frozen::CR + frozen::SR))?;
    close("R:Q", miti.r_to_q.ok_or("no R:Q")?, frac(frozen::CR + frozen::SR, frozen::QUESTIONS))?;
    close(
        "%MI non-adherent",
        miti.pct_mi_non_adherent.ok_or("no %MI non-adherent")?,
        frac(frozen::NON_ADHERENT, frozen::TOTAL - frozen::NOT_APPLICABLE),
    )?;

    let qm = compute_question_analysis(&sessions, &cfg);
    close("question rate", qm.question_rate, frac(frozen::QUESTIONS, frozen::TOTAL))?;
    close("ev elicit rate", qm.ev_elicit_rate, frac(frozen::EV_ELICIT.0, frozen::EV_ELICIT.1))?;
    close("pl elicit rate", qm.pl_elicit_rate, frac(frozen::PL_ELICIT.0, frozen::PL_ELICIT.1))?;

    let mut series = Vec::new();
    for (session, (id, want)) in sessions.iter().zip(frozen::BUCKETS) {
        ensure!(session.session_id == id, "session order: got {}, want {id}", session.session_id);
        let buckets = bucket_question_ratios(session, &cfg).map_err(|e| e.to_string())?;
        ensure!(buckets.len() == want.len(), "{id}: {} buckets, want {}", buckets.len(), want.len());
        for (i, (b, &(ev, pl, n))) in buckets.iter().zip(want).enumerate() {
            close(&format!("{id} bucket {i} ev"), b.ev_ratio, frac(ev, n))?;
            close(&format!("{id} bucket {i} pl"), b.pl_ratio, frac(pl, n))?;
        }
        series.push(buckets);
    }
    let long = &sessions[0];
    ensure!(long.utterances().len() == 21, "first session has {} counselor utterances", long.utterances().len());
    ensure!(series[0].len() == 7, "21 utterances gave {} buckets", series[0].len());

    let averages = average_buckets(&series, cfg.max_buckets);
    ensure!(averages.len() == 7, "{} averaged buckets", averages.len());
    for (i, avg) in averages.iter().enumerate() {
        let present: Vec<&(usize, usize, usize)> = frozen::BUCKETS.iter().filter_map(|(_, b)| b.get(i)).collect();
        let ev = present.iter().map(|&&(e, _, n)| frac(e, n)).sum::<f64>() / present.len() as f64;
        let pl = present.iter().map(|&&(_, p, n)| frac(p, n)).sum::<f64>() / present.len() as f64;
        close(&format!("mean bucket {i} ev"), avg.ev_ratio, ev)?;
        close(&format!("mean bucket {i} pl"), avg.pl_ratio, pl)?;
    }
    Ok(format!("{} sentences, 3 sessions, 7 buckets", frozen::TOTAL))
}

// ---------------------------------------------------------------------------
// C8

fn eligible_labeled(path: &Path) -> usize {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let v: Value = serde_json::from_str(l).unwrap();
            v["utterances"]
                .as_array()
                .unwrap()
                .iter()
                .enumerate()
                .filter(|(i, u)| *i >= 1 && u["speaker"] == "counselor" && u.get("misc_label").is_some())
                .count()
        })
        .sum()
}

fn pool_determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let replay = dir.path().join("pool.replay.jsonl");
    let store = ReplayStore::open(&replay).map_err(|e| e.to_string())?;
    let (recorded, _) = build_sample_pool(gateway(RecordingProvider::new(scripted(), store)));
    let recorded_path = dir.path().join("recorded.pool.jsonl");
    recorded.save(&recorded_path).map_err(|e| e.to_string())?;

    let mut files = Vec::new();
    let mut report = None;
    for run in 0..2 {
        let (pool, r) = build_sample_pool(gateway(ReplayProvider::open(&replay).map_err(|e| e.to_string())?));
        let path = dir.path().join(format!("run{run}.pool.jsonl"));
        pool.save(&path).map_err(|e| e.to_string())?;
        files.push(std::fs::read(&path).map_err(|e| e.to_string())?);
        report = Some(r);
    }
    let report = report.unwrap();
    ensure!(files[0] == files[1], "two replay builds wrote different bytes");
    ensure!(
        files[0] == std::fs::read(&recorded_path).unwrap(),
        "replay build differs from the recording build"
    );
    let want = eligible_labeled(&fixture("corpus_sample.jsonl"));
    ensure!(report.samples == want, "{} samples, want {want} eligible labeled utterances", report.samples);
    ensure!(report.is_consistent(), "inconsistent build report {report:?}");
    Ok(format!("{} samples, {} bytes", report.samples, files[0].len()))
}

// ---------------------------------------------------------------------------
// C9

const E2E_TURNS: usize = 15;
const RESTART_AFTER: usize = 7;

fn e2e_utterances() -> Vec<String> {
    [
        "I want to eat healthier",
        "I eat a lot of sweets after dinner",
        "It happens almost every night",
        "I tried keeping sweets out of the house",
        "It worked for a week",
        "Then I bought cookies again",
        "I feel guilty afterwards",
        "My weight went up this year",
        "I want to feel lighter",
        "I will buy fruit instead",
        "Maybe I can eat yogurt",
        "I started walking after dinner",
        "Walking helps me forget the sweets",
        "I plan to walk four times a week",
        "I think I can do it",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect()
}

fn e2e_manager(data: &Path, pool: &Path, gw: Gateway) -> Result<SessionManager, String> {
    let cfg = config_with_pool(Some(pool.to_path_buf()));
    let engine = Arc::new(Engine::with_gateway(&cfg, gw).map_err(|e| e.to_string())?);
    Ok(SessionManager::open(engine, data, cfg.server.min_user_utterances)
        .map_err(|e| e.to_string())?
        .with_id_generator(|| "e2e-session".into())
        .with_clock(|| None))
}

/// Runs the scripted session; `restart_after` drops and reopens the
/// manager mid-session.
fn run_e2e(
    data: &Path,
    pool: &Path,
    make_gateway: &GatewayFactory,
    restart_after: Option<usize>,
) -> Result<Vec<u8>, String> {
    let mut manager = e2e_manager(data, pool, make_gateway()?)?;
    let id = manager
        .create_session(mi_dialogue::model::Condition::Ours, None)
        .map_err(|e| e.to_string())?
        .session_id;
    for (i, text) in e2e_utterances().iter().enumerate() {
        if restart_after == Some(i) {
            drop(manager);
            manager = e2e_manager(data, pool, make_gateway()?)?;
        }
        let reply = manager.post_utterance(&id, text).map_err(|e| format!("turn {i}: {e}"))?;
        let n = i + 1;
        ensure!(reply.user_utterance_count == n, "turn {i}: count {}", reply.user_utterance_count);
        ensure!(
            reply.protocol_met == (n >= E2E_TURNS),
            "after {n} client utterances protocol_met = {}",
            reply.protocol_met
        );
    }
    let end = manager.end_session(&id).map_err(|e| e.to_string())?;
    ensure!(end.protocol_met, "ended session does not meet the protocol");
    std::fs::read(&end.log_path).map_err(|e| e.to_string())
}

fn end_to_end() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let pool_path = dir.path().join("pool.jsonl");
    let (pool, _) = build_sample_pool(gateway(scripted()));
    pool.save(&pool_path).map_err(|e| e.to_string())?;

    let replay = dir.path().join("e2e.replay.jsonl");
    let record = {
        let replay = replay.clone();
        move || -> Result<Gateway, String> {
            let store = ReplayStore::open(&replay).map_err(|e| e.to_string())?;
            Ok(gateway(RecordingProvider::new(scripted(), store)))
        }
    };
    let replay_gw = {
        let replay = replay.clone();
        move || -> Result<Gateway, String> { Ok(gateway(ReplayProvider::open(&replay).map_err(|e| e.to_string())?)) }
    };
    let recorded = run_e2e(&dir.path().join("run-record"), &pool_path, &record, None)?;
    let straight = run_e2e(&dir.path().join("run-replay"), &pool_path, &replay_gw, None)?;
    let restarted = run_e2e(&dir.path().join("run-restart"), &pool_path, &replay_gw, Some(RESTART_AFTER))?;
    ensure!(straight == recorded, "replayed export differs from the recorded export");
    ensure!(restarted == recorded, "export after a mid-session restart differs");
    let lines = recorded.iter().filter(|&&b| b == b'\n').count();
    Ok(format!("{E2E_TURNS} client turns, {lines} log records, restart after turn {RESTART_AFTER}"))
}

// ---------------------------------------------------------------------------
// C10

const FS_SAMPLES: usize = 5;
const FS_HISTORY: usize = 15;
const GUIDE_CONTEXT: usize = 60;

fn numbered_history(n: usize) -> Vec<Utterance> {
    (0..n)
        .map(|i| {
            let speaker = if (n - 1 - i).is_multiple_of(2) { Speaker::Client } else { Speaker::Counselor };
            Utterance::new(speaker, format!("utterance-{i:03}"), i as u32).unwrap()
        })
        .collect()
}

fn baseline_conformance() -> Outcome {
    let samples = default_fs_samples();
    let fs = MiFewShot::with_defaults(unreachable_gateway()).map_err(|e| e.to_string())?;
    let history = numbered_history(20);
    let first = fs.build_request(&history).map_err(|e| e.to_string())?;
    let again = fs.build_request(&history).map_err(|e| e.to_string())?;
    ensure!(first == again, "MI-FS prompt is not stable across calls");

    let system = &first.system_prompt;
    let blocks: Vec<&str> = system.split("## Sample ").skip(1).collect();
    ensure!(blocks.len() == FS_SAMPLES, "{} samples in prompt, want {FS_SAMPLES}", blocks.len());
    ensure!(samples.len() == FS_SAMPLES, "{} bundled samples", samples.len());
    for (k, (block, sample)) in blocks.iter().zip(&samples).enumerate() {
        ensure!(block.starts_with(&format!("{}\n", k + 1)), "sample {k} is numbered out of order");
        let hist = block
            .split_once("<History>\n")
            .and_then(|(_, rest)| rest.split_once("\n\n<Response>"))
            .map(|(h, _)| h)
            .ok_or_else(|| format!("sample {k}: no history block"))?;
        let lines: Vec<&str> = hist.lines().collect();
        ensure!(lines.len() == FS_HISTORY, "sample {k}: {} history lines, want {FS_HISTORY}", lines.len());
        ensure!(
            lines[0].ends_with(&sample.history[0].text),
            "sample {k} is not in bundled order"
        );
        ensure!(block.contains(&sample.response), "sample {k}: response missing");
    }
    let current: Vec<&str> = first.messages[0]
        .content
        .lines()
        .filter(|l| l.contains("utterance-"))
        .collect();
    ensure!(current.len() == FS_HISTORY, "MI-FS current history has {} lines", current.len());

    let guide = MiGuide::with_defaults(unreachable_gateway());
    for (given, want) in [(70usize, GUIDE_CONTEXT), (30, 30), (1, 1)] {
        let history = numbered_history(given);
        let prompt = guide.build_request(&history).map_err(|e| e.to_string())?.prompt_text();
        let rendered: Vec<usize> = prompt
            .lines()
            .filter_map(|l| l.split_once("utterance-").and_then(|(_, n)| n.parse().ok()))
            .collect();
        let expected: Vec<usize> = (given - want..given).collect();
        ensure!(
            rendered == expected,
            "MI-Guide with {given} utterances rendered {} (first {:?}), want the last {want}",
            rendered.len(),
            rendered.first()
        );
    }
    Ok(format!(
        "{FS_SAMPLES} samples x {FS_HISTORY} utterances; guide context capped at {GUIDE_CONTEXT}"
    ))
}
