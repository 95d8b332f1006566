// Debugging: where do detections land relative to ground truth?

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use vatn::data::{synth_generate, SynthConfig, Volume};
use vatn::detect::{
    candidate_select, sliding_window_infer, train_rpn, InferConfig, RpnConfig, RpnModel,
    RpnTrainConfig,
};
use vatn::graph::ParamStore;

fn main() {
    let gen = |seed: u64| -> Volume {
        let cfg = SynthConfig {
            volume_size: [64; 3],
            nodule_count: [1, 2],
            seed,
            ..Default::default()
        };
        synth_generate(&cfg).unwrap()
    };
    let train_vols: Vec<Volume> = (0..12).map(|i| gen(1000 + i)).collect();
    let eval_v = gen(9000);

    let mut store = ParamStore::<f32>::new();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut cfg = RpnConfig::desk();
    cfg.patch = 64;
    let model = RpnModel::build(&mut store, cfg, &mut rng).unwrap();

    let mut tcfg = RpnTrainConfig {
        epochs: 30,
        batch_size: 2,
        patches_per_volume: 2,
        patch: 64,
        seed: 3,
        ..RpnTrainConfig::desk()
    };
    tcfg.ohem_n = 8;
    tcfg.lr.milestones = vec![(24, 0.001)];
    train_rpn(&model, &mut store, &train_vols, &tcfg).unwrap();

    let icfg = InferConfig {
        patch: 64,
        overlap: 32,
        score_keep_threshold: 0.05,
    };
    let raw = sliding_window_infer(&model, &store, &eval_v, &icfg);
    println!("gt: {:?}", eval_v.annotations);
    let mut sorted = raw.clone();
    sorted.sort_by(|a, b| b.score.partial_cmp(&a.score).unwrap());
    println!("top 12 raw:");
    for b in sorted.iter().take(12) {
        println!("  z {:6.1} y {:6.1} x {:6.1} d {:5.1} score {:.3}", b.z, b.y, b.x, b.d, b.score);
    }
    for gt in &eval_v.annotations {
        let best = raw
            .iter()
            .filter(|b| {
                let dz = b.z - gt.z;
                let dy = b.y - gt.y;
                let dx = b.x - gt.x;
                (dz * dz + dy * dy + dx * dx).sqrt() <= gt.d / 2.0
            })
            .max_by(|a, b| a.score.partial_cmp(&b.score).unwrap());
        println!("gt {gt:?} -> best in-radius raw box: {best:?}");
        // rank of that box among all raw boxes
        if let Some(bb) = best {
            let rank = sorted.iter().position(|b| b.score <= bb.score).unwrap_or(usize::MAX);
            println!("   rank by score: {rank} of {}", sorted.len());
        }
    }
    let cands = candidate_select(&raw);
    println!("{} candidates; top 5:", cands.len());
    for b in cands.iter().take(5) {
        println!("  z {:6.1} y {:6.1} x {:6.1} d {:5.1} score {:.3}", b.z, b.y, b.x, b.d, b.score);
    }
}
