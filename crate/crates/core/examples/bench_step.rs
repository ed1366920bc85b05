use std::time::Instant;

use prefchat_core::data::TrainingQuadruple;
use prefchat_core::model::LossOptions;
use prefchat_core::{DialogueContext, Model, ModelConfig, Vocabulary};

fn main() {
    let vocab = Vocabulary::from_texts(["abcdefghijklmnopqrstuvwxyz .!?"]);
    let mut cfg = ModelConfig::desk(vocab.len());
    cfg.max_context_len = 64;
    cfg.max_response_len = 32;
    let model = Model::init(cfg, vocab).unwrap();
    let ctx = DialogueContext::from_texts(&["hello there how are you doing today!", "fine thanks and you?", "great weather here."]);
    let q = TrainingQuadruple {
        context: ctx,
        r_h: "that sounds lovely indeed!".into(),
        r_m: "ok then see you.".into(),
        r_r: "i like green apples a lot.".into(),
        record_id: "x".into(),
        turn_index: 3,
    };
    let mut grads = vec![0.0f32; model.num_params()];
    let t = Instant::now();
    let n = 20;
    for _ in 0..n {
        model.joint_loss_grad(&q, LossOptions::default(), 1.0, &mut grads).unwrap();
    }
    println!("params {} ; {:.1} ms per quadruple", model.num_params(), t.elapsed().as_secs_f64() * 1000.0 / n as f64);
}
