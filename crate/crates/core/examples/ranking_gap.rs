//! Trains the desk model on the synthetic corpus and compares the ranking
//! quality of the preference score with that of the generation probability.
//!
//! Usage: ranking_gap [n_dialogues] [epochs] [peak_lr]

use std::time::Instant;

use prefchat_core::eval::{ranking_gap, GapConfig};
use prefchat_core::train::TrainEvent;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let mut cfg = GapConfig::default();
    if let Some(n) = args.get(1) {
        cfg.synth.n_dialogues = n.parse().expect("n_dialogues");
    }
    if let Some(e) = args.get(2) {
        cfg.train.epochs = e.parse().expect("epochs");
    }
    if let Some(lr) = args.get(3) {
        cfg.train.peak_lr = lr.parse().expect("peak_lr");
    }
    let t0 = Instant::now();
    let report = ranking_gap(&cfg, &mut |e| {
        if let TrainEvent::Epoch { epoch, mean_nll, mean_pe, mean_total, .. } = e {
            println!("epoch {epoch}: nll {mean_nll:.3} pe {mean_pe:.4} total {mean_total:.3} ({:.0}s)", t0.elapsed().as_secs_f64());
        }
    })
    .expect("experiment failed");
    for (s, m) in &report.metrics {
        println!("{:<28} MAP {:.3} MRR {:.3} P@1 {:.3} (n={})", s.name(), m.map, m.mrr, m.p_at_1, m.n);
    }
    println!("train {:.0}s, eval {:.0}s", report.train_seconds, report.eval_seconds);
}
