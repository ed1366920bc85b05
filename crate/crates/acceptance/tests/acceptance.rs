//! Runs every primary acceptance criterion in sequence and prints one
//! PASS/FAIL line per criterion. Exits non-zero if any criterion fails.

use std::sync::Arc;
use std::time::{Duration, Instant};

use axum::body::Body;
use axum::http::{Request, StatusCode};
use cpu_time::ProcessTime;
use http_body_util::BodyExt;
use prefchat_core::data::fixtures::two_dialogues;
use prefchat_core::data::synth::{synth_corpus, SynthConfig};
use prefchat_core::data::{build_quadruples, compute_stats, Action, AnnotatedTurn, DialogueRecord, RecordStatus};
use prefchat_core::eval::{fleiss_kappa, map_mrr_p1, ranking_gap, GapConfig, RankedInstance, Scorer};
use prefchat_core::generation::ScoredCandidate;
use prefchat_core::model::pe_loss;
use prefchat_core::train::{check_random_pairs, epoch_seed, TrainConfig, Trainer};
use prefchat_core::{DialogueContext, Model, ModelConfig, Role, Vocabulary};
use prefchat_service::session::{Command, Mode, Session, SessionState};
use prefchat_service::{build_state, router, AppState, CandidateGenerator, ServiceConfig};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};
use tower::ServiceExt;

type Outcome = Result<String, String>;

fn check(cond: bool, detail: String) -> Outcome {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

// ---------------------------------------------------------------- losses

/// `-(1/3) Σ ln σ(a−b)` written out with `ln(1 + e^{−x})`.
fn pe_direct(h: f64, m: f64, r: f64) -> f64 {
    let neg_log_sigmoid = |x: f64| (1.0 + (-x).exp()).ln();
    (neg_log_sigmoid(h - m) + neg_log_sigmoid(h - r) + neg_log_sigmoid(m - r)) / 3.0
}

fn loss_oracle() -> Outcome {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    let mut worst_shift = 0.0f64;
    for _ in 0..1000 {
        let [h, m, r]: [f64; 3] = std::array::from_fn(|_| rng.gen_range(-20.0..20.0));
        let got = pe_loss(h, m, r).map_err(|e| e.to_string())?;
        worst = worst.max((got - pe_direct(h, m, r)).abs());
        let c = rng.gen_range(-50.0..50.0);
        let shifted = pe_loss(h + c, m + c, r + c).map_err(|e| e.to_string())?;
        worst_shift = worst_shift.max((shifted - got).abs());
    }
    let zero = (pe_loss(0.0, 0.0, 0.0).unwrap() - std::f64::consts::LN_2).abs();
    let secs = t.elapsed().as_secs_f64();
    check(
        worst < 1e-6 && zero < 1e-9 && worst_shift < 1e-9 && secs < 1.0,
        format!("max |err| {worst:.2e}, |pe(0,0,0) - ln 2| {zero:.1e}, shift {worst_shift:.1e}, {secs:.3}s"),
    )
}

fn gradient_check() -> Outcome {
    let t = ProcessTime::now();
    let reports = check_random_pairs(20, 0, 1e-3).map_err(|e| e.to_string())?;
    let worst = reports.iter().map(|r| r.max_relative_error).fold(0.0, f64::max);
    let params: usize = reports.iter().map(|r| r.checked).sum();
    let secs = t.elapsed().as_secs_f64();
    check(
        worst < 1e-4 && secs < 300.0,
        format!("20 pairs, {params} parameters, max relative error {worst:.2e}, {secs:.0}s CPU"),
    )
}

// --------------------------------------------------------------- ranking

/// Walks each ordering until the relevant candidate shows up.
fn rank_scan(ranked: &[RankedInstance]) -> (f64, f64, f64) {
    let (mut ap, mut rr, mut p1) = (0.0, 0.0, 0usize);
    for inst in ranked {
        let mut seen = 0;
        for (pos, &c) in inst.order.iter().enumerate() {
            if c == inst.relevant_index {
                seen += 1;
                let precision_here = seen as f64 / (pos + 1) as f64;
                ap += precision_here;
                rr += 1.0 / (pos + 1) as f64;
                if pos == 0 {
                    p1 += 1;
                }
                break;
            }
        }
    }
    let n = ranked.len() as f64;
    (ap / n, rr / n, p1 as f64 / n)
}

fn random_instances(rng: &mut ChaCha8Rng, n: usize, size: usize) -> Vec<RankedInstance> {
    (0..n)
        .map(|_| {
            let mut order: Vec<usize> = (0..size).collect();
            order.shuffle(rng);
            RankedInstance { order, relevant_index: rng.gen_range(0..size) }
        })
        .collect()
}

fn ranking_oracle() -> Outcome {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for i in 0..1000 {
        let size = rng.gen_range(1..=12);
        let one = random_instances(&mut rng, 1, size);
        let m = map_mrr_p1(&one).map_err(|e| e.to_string())?;
        let (map, mrr, p1) = rank_scan(&one);
        if (m.map, m.mrr, m.p_at_1) != (map, mrr, p1) {
            return Err(format!("instance {i}: {m:?} vs scan ({map}, {mrr}, {p1})"));
        }
    }
    let batch = random_instances(&mut rng, 10_000, 8);
    let m = map_mrr_p1(&batch).map_err(|e| e.to_string())?;
    let h8: f64 = (1..=8).map(|k| 1.0 / k as f64).sum::<f64>() / 8.0;
    let secs = t.elapsed().as_secs_f64();
    check(
        (m.mrr - h8).abs() <= 0.01 && (m.p_at_1 - 0.125).abs() <= 0.01 && secs < 30.0,
        format!("1000 exact matches; random baseline MRR {:.4} (H8/8 = {h8:.4}), P@1 {:.4}, {secs:.2}s", m.mrr, m.p_at_1),
    )
}

// ------------------------------------------------------ training / ranking gap

fn ranking_gap_and_training() -> (Outcome, Outcome) {
    let cfg = GapConfig::default();
    let t = ProcessTime::now();
    let report = match ranking_gap(&cfg, &mut |_| {}) {
        Ok(r) => r,
        Err(e) => return (Err(e.to_string()), Err(e.to_string())),
    };
    let cpu = t.elapsed().as_secs_f64();
    let pref = report.metrics[&Scorer::PreferenceScore];
    let gen = report.metrics[&Scorer::GenerationLogprob];
    let norm = report.metrics[&Scorer::LengthNormalizedLogprob];
    let gap = check(
        pref.p_at_1 >= 0.5 && gen.p_at_1 < 0.25 && cpu < 900.0,
        format!(
            "{} dialogues ({} train), {} held-out instances: P@1 preference {:.3}, generation {:.3}, length-normalised {:.3}; \
             MRR {:.3} / {:.3}; training {:.0}s wall, train + eval {cpu:.0}s CPU (limit 900)",
            cfg.synth.n_dialogues,
            report.train_dialogues,
            pref.n,
            pref.p_at_1,
            gen.p_at_1,
            norm.p_at_1,
            pref.mrr,
            gen.mrr,
            report.train_seconds,
        ),
    );

    let means: Vec<f64> = report.epoch_means.iter().map(|(_, m)| *m).collect();
    let decreasing = means.len() == 5 && means.windows(2).all(|w| w[1] < w[0]);
    let identical = bit_identical_runs();
    let sanity = match identical {
        Ok(detail) => check(decreasing, format!("epoch means {means:.3?}; {detail}")),
        Err(e) => Err(format!("epoch means {means:.3?}; {e}")),
    };
    (gap, sanity)
}

/// Two desk-architecture runs with the same seed on a small corpus.
fn bit_identical_runs() -> Outcome {
    let records = synth_corpus(&SynthConfig { n_dialogues: 16, seed: 3, ..Default::default() }).map_err(|e| e.to_string())?;
    let vocab = Vocabulary::from_texts(records.iter().flat_map(|r| &r.turns).map(|t| t.final_text.as_str()));
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let run = |name: &str| -> Result<Vec<u8>, String> {
        let cfg = ModelConfig { max_context_len: 64, max_response_len: 40, seed: 7, ..ModelConfig::desk(vocab.len()) };
        let model = Model::init(cfg, vocab.clone()).map_err(|e| e.to_string())?;
        let tc = TrainConfig { epochs: 5, peak_lr: 1e-3, seed: 7, ..Default::default() };
        let mut trainer = Trainer::new(model, tc).map_err(|e| e.to_string())?;
        trainer.run(&records, &[], &mut |_| {}).map_err(|e| e.to_string())?;
        let path = dir.path().join(name);
        trainer.save_checkpoint(&path).map_err(|e| e.to_string())?;
        std::fs::read(&path).map_err(|e| e.to_string())
    };
    let (a, b) = (run("a.ckpt")?, run("b.ckpt")?);
    check(a == b, format!("two seeded 5-epoch runs: checkpoints of {} bytes, identical = {}", a.len(), a == b))
}

// ------------------------------------------------------------ quadruples

/// Dialogues whose texts carry their dialogue tag, drawn from a tiny word
/// list so that candidates often equal the human response.
fn fuzzed_records(rng: &mut ChaCha8Rng, n_turns: usize) -> Vec<DialogueRecord> {
    let words = ["ab", "ba", "cd"];
    let mut records = Vec::new();
    let mut turns_total = 0;
    while turns_total < n_turns {
        let d = records.len();
        let text = |rng: &mut ChaCha8Rng| format!("{} #{d}", words.choose(rng).unwrap());
        let rounds = rng.gen_range(7..=10);
        let mut turns = vec![AnnotatedTurn::opening(Role::A, text(rng))];
        for t in 1..=rounds {
            let shown: Vec<String> = (0..rng.gen_range(1..=4)).map(|_| text(rng)).collect();
            let role = if t % 2 == 1 { Role::B } else { Role::A };
            let turn = match rng.gen_range(0..3) {
                0 => {
                    let i = rng.gen_range(0..shown.len());
                    AnnotatedTurn { speaker_role: role, final_text: shown[i].clone(), action: Action::Select, shown_candidates: shown, chosen_index: Some(i), candidate_scores: None }
                }
                1 => {
                    let i = rng.gen_range(0..shown.len());
                    let final_text = format!("{} x", shown[i]);
                    AnnotatedTurn { speaker_role: role, final_text, action: Action::Revise, shown_candidates: shown, chosen_index: Some(i), candidate_scores: None }
                }
                _ => AnnotatedTurn { speaker_role: role, final_text: text(rng), action: Action::Rewrite, shown_candidates: shown, chosen_index: None, candidate_scores: None },
            };
            turns.push(turn);
        }
        turns_total += rounds;
        let rec = DialogueRecord::new(format!("{d}"), turns, RecordStatus::Accepted);
        rec.validate().expect("fuzzed record is valid");
        records.push(rec);
    }
    records
}

fn quadruple_invariants() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let records = fuzzed_records(&mut rng, 10_000);
    let turns: usize = records.iter().map(|r| r.annotated_rounds()).sum();
    let quads = build_quadruples(&records, 11);
    let tag = |s: &str| s.rsplit('#').next().and_then(|t| t.split(' ').next()).unwrap_or("").to_string();
    let mut violations = 0;
    for q in &quads {
        if q.r_m == q.r_h {
            violations += 1;
        }
        if tag(&q.r_r) == q.record_id {
            violations += 1;
        }
    }
    // Turns with every shown candidate equal to the human text are skipped.
    let skipped = turns - quads.len();

    let fixture = two_dialogues();
    let a = build_quadruples(&fixture, epoch_seed(0, 0));
    let b = build_quadruples(&fixture, epoch_seed(0, 1));
    let differing = a.iter().zip(&b).filter(|(x, y)| x.r_m != y.r_m).count();
    check(
        violations == 0 && differing >= 1 && turns >= 10_000,
        format!(
            "{turns} fuzzed turns, {} quadruples ({skipped} turns without an eligible candidate), {violations} violations; \
             {differing} r_M differ between two epochs on the fixture",
            quads.len()
        ),
    )
}

// ------------------------------------------------------------------ kappa

fn kappa_checks() -> Outcome {
    let perfect = fleiss_kappa(&[vec![3, 0, 0], vec![0, 3, 0], vec![0, 0, 3], vec![3, 0, 0]], 3).map_err(|e| e.to_string())?;
    let split = fleiss_kappa(&[vec![2, 1], vec![1, 2], vec![1, 2], vec![2, 1]], 3).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst = 0.0f64;
    let mut matrices = 0;
    while matrices < 200 {
        let (n, k, raters) = (rng.gen_range(2..20), rng.gen_range(2..6), rng.gen_range(2..7));
        let rows: Vec<Vec<usize>> = (0..n)
            .map(|_| {
                let mut row = vec![0; k];
                for _ in 0..raters {
                    row[rng.gen_range(0..k)] += 1;
                }
                row
            })
            .collect();
        let Ok(base) = fleiss_kappa(&rows, raters) else { continue };
        let mut labels: Vec<usize> = (0..k).collect();
        labels.shuffle(&mut rng);
        let mut permuted: Vec<Vec<usize>> = rows.iter().map(|r| labels.iter().map(|&l| r[l]).collect()).collect();
        permuted.shuffle(&mut rng);
        let other = fleiss_kappa(&permuted, raters).map_err(|e| e.to_string())?;
        worst = worst.max((other - base).abs());
        matrices += 1;
    }
    check(
        perfect == 1.0 && (split + 1.0 / 3.0).abs() < 1e-9 && worst < 1e-12,
        format!("perfect {perfect}, 2-1 split {split:.12}, max permutation change {worst:.1e} over {matrices} matrices"),
    )
}

// --------------------------------------------------------------- protocol

fn stub_candidates(ctx: &DialogueContext) -> Vec<ScoredCandidate> {
    (0..3)
        .map(|i| ScoredCandidate {
            text: format!("c{} {i}", ctx.len()),
            preference_score: i as f64,
            generation_logprob: 0.0,
            token_count: 3,
            step_logprobs: vec![],
        })
        .collect()
}

fn commands(s: &Session) -> Vec<Command> {
    let cand = s.pending_candidates.first().cloned().unwrap_or_default();
    let resp = |action, chosen_index, text: String| Command::Response { action, chosen_index, text };
    vec![
        Command::Opening { text: "hello".into() },
        resp(Action::Select, Some(0), cand.clone()),
        resp(Action::Revise, Some(0), format!("{cand} edited")),
        resp(Action::Rewrite, None, format!("own {}", s.turns.len())),
        resp(Action::Rewrite, None, cand),
        Command::Message { text: "hi".into() },
        Command::Finish,
    ]
}

/// Every command sequence up to `depth`; returns (paths, finishes, violations).
fn explore(s: &Session, depth: usize, counts: &mut (usize, usize, usize)) {
    if depth == 0 {
        counts.0 += 1;
        return;
    }
    for cmd in commands(s) {
        let finish = cmd == Command::Finish;
        let mut next = s.clone();
        match next.apply(cmd, &mut stub_candidates) {
            Ok(out) => {
                if finish {
                    counts.1 += 1;
                    let rec = out.record.expect("record");
                    if s.round_count < 7 || rec.annotated_rounds() < 7 || next.state != SessionState::UnderReview {
                        counts.2 += 1;
                    }
                }
                explore(&next, depth - 1, counts);
            }
            Err(_) => {
                if next != *s {
                    counts.2 += 1;
                }
                counts.0 += 1;
            }
        }
    }
}

struct SlowStub;

impl CandidateGenerator for SlowStub {
    fn generate(&mut self, ctx: &DialogueContext, _seed: u64) -> prefchat_core::Result<Vec<ScoredCandidate>> {
        std::thread::sleep(Duration::from_millis(100));
        Ok(stub_candidates(ctx))
    }
}

async fn call(app: &Arc<AppState>, uri: &str, body: Value) -> (StatusCode, Value) {
    let req = Request::builder()
        .method("POST")
        .uri(uri)
        .header("content-type", "application/json")
        .body(Body::from(body.to_string()))
        .unwrap();
    let resp = router(app.clone()).oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    (status, serde_json::from_slice(&bytes).unwrap_or(Value::Null))
}

fn double_submit() -> Result<usize, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cfg = ServiceConfig { data_dir: dir.path().to_path_buf(), ..Default::default() };
    let app = build_state(&cfg, SlowStub).map_err(|e| e.to_string())?;
    let rt = tokio::runtime::Builder::new_multi_thread().worker_threads(2).enable_all().build().map_err(|e| e.to_string())?;
    rt.block_on(async move {
        let (st, v) = call(&app, "/sessions", json!({"mode": "collect"})).await;
        if st != StatusCode::CREATED {
            return Err(format!("create returned {st}"));
        }
        let id = v["id"].as_str().unwrap_or_default().to_string();
        call(&app, &format!("/sessions/{id}/opening"), json!({"text": "go"})).await;
        let rounds = 10;
        for round in 0..rounds {
            let uri = format!("/sessions/{id}/response");
            let body = json!({"action": "rewrite", "text": format!("answer {round}")});
            let a = tokio::spawn({
                let (app, uri, body) = (app.clone(), uri.clone(), body.clone());
                async move { call(&app, &uri, body).await.0 }
            });
            let b = tokio::spawn({
                let app = app.clone();
                async move { call(&app, &uri, body).await.0 }
            });
            let mut statuses = [a.await.unwrap(), b.await.unwrap()];
            statuses.sort();
            if statuses != [StatusCode::OK, StatusCode::CONFLICT] {
                return Err(format!("round {round}: {statuses:?}"));
            }
        }
        let (_, v) = call(&app, &format!("/sessions/{id}/finish"), json!({})).await;
        let rounds_recorded = v["record"]["turns"].as_array().map_or(0, |t| t.len() - 1);
        if rounds_recorded != rounds {
            return Err(format!("record holds {rounds_recorded} rounds, expected {rounds}"));
        }
        Ok(rounds)
    })
}

fn protocol_enforcement() -> Outcome {
    let mut counts = (0, 0, 0);
    explore(&Session::new("walk", Mode::Collect), 10, &mut counts);
    let (paths, finishes, violations) = counts;
    let races = double_submit();
    let detail = format!("{paths} command sequences to depth 10, {finishes} finishes, {violations} violations");
    match races {
        Ok(n) => check(violations == 0 && finishes > 0, format!("{detail}; {n} concurrent double-submits each had one winner")),
        Err(e) => Err(format!("{detail}; double-submit: {e}")),
    }
}

// ------------------------------------------------------------------ stats

fn stats_fixture() -> Outcome {
    let s = compute_stats(&two_dialogues());
    let p = s.action_proportions;
    let sum = p.select + p.revise + p.rewrite;
    check(
        s.n_dialogues == 2
            && s.n_utterances == 16
            && s.avg_utterance_length == 90.0 / 16.0
            && s.action_counts == [4, 4, 6]
            && p.select == 4.0 / 14.0
            && p.revise == 4.0 / 14.0
            && p.rewrite == 6.0 / 14.0
            && (sum - 1.0).abs() < 1e-12,
        format!(
            "{} dialogues, {} utterances, mean length {}, actions {:?}, proportions sum {sum}",
            s.n_dialogues, s.n_utterances, s.avg_utterance_length, s.action_counts
        ),
    )
}

fn main() {
    // `cargo test -- --list` and filters are not meaningful for this target.
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    let mut results: Vec<(&str, Outcome)> = Vec::new();
    let mut run = |name: &'static str, f: &dyn Fn() -> Outcome| {
        let out = f();
        print_line(name, &out);
        results.push((name, out));
    };
    run("loss formula oracle", &loss_oracle);
    run("gradient check", &gradient_check);
    run("ranking-metric oracle", &ranking_oracle);
    let (gap, sanity) = ranking_gap_and_training();
    print_line("ranking gap on synthetic corpus", &gap);
    print_line("training sanity", &sanity);
    run("quadruple invariants", &quadruple_invariants);
    run("fleiss kappa", &kappa_checks);
    run("protocol enforcement", &protocol_enforcement);
    run("corpus stats", &stats_fixture);
    let failed = results.iter().filter(|(_, r)| r.is_err()).count() + usize::from(gap.is_err()) + usize::from(sanity.is_err());
    println!("\n{} criteria, {failed} failed", results.len() + 2);
    if failed > 0 {
        std::process::exit(1);
    }
}

fn print_line(name: &str, out: &Outcome) {
    match out {
        Ok(d) => println!("PASS  {name}: {d}"),
        Err(d) => println!("FAIL  {name}: {d}"),
    }
}
