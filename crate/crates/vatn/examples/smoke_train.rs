// Scratch harness for watching desk-scale training behavior.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::time::Instant;
use vatn::data::{synth_generate, SynthConfig, Volume};
use vatn::detect::{
    candidate_select, sliding_window_infer, train_rpn, InferConfig, RpnConfig, RpnModel,
    RpnTrainConfig,
};
use vatn::eval::{froc, hit_match, ScanMatches};
use vatn::graph::ParamStore;

fn main() {
    let n_train = 12;
    let n_eval = 4;
    let vol_size = 64usize;

    let gen = |seed: u64| -> Volume {
        let cfg = SynthConfig {
            volume_size: [vol_size; 3],
            nodule_count: [1, 2],
            seed,
            ..Default::default()
        };
        synth_generate(&cfg).unwrap()
    };
    let train_vols: Vec<Volume> = (0..n_train).map(|i| gen(1000 + i)).collect();
    let eval_vols: Vec<Volume> = (0..n_eval).map(|i| gen(9000 + i)).collect();

    let mut store = ParamStore::<f32>::new();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut cfg = RpnConfig::desk();
    cfg.patch = 64;
    let model = RpnModel::build(&mut store, cfg, &mut rng).unwrap();
    println!("trainable params: {}", store.num_trainable());

    let tcfg = RpnTrainConfig {
        epochs: 10,
        batch_size: 2,
        patches_per_volume: 2,
        patch: 64,
        seed: 3,
        ..RpnTrainConfig::desk()
    };
    let t0 = Instant::now();
    let report = train_rpn(&model, &mut store, &train_vols, &tcfg).unwrap();
    println!("train time: {:?}", t0.elapsed());
    for (e, (tr, va)) in report.epoch_losses.iter().enumerate() {
        println!("epoch {e}: train {tr:.4} val {va:.4}");
    }

    let icfg = InferConfig {
        patch: 64,
        overlap: 32,
        score_keep_threshold: 0.1,
    };
    let mut scans = Vec::new();
    let t1 = Instant::now();
    for v in &eval_vols {
        let raw = sliding_window_infer(&model, &store, v, &icfg);
        let cands = candidate_select(&raw);
        let m = hit_match(&cands, &v.annotations, &v.irrelevant);
        println!(
            "{}: {} raw, {} candidates, gt {} hit {:?}",
            v.series_id,
            raw.len(),
            cands.len(),
            v.annotations.len(),
            m.gt_hit
        );
        scans.push(ScanMatches::from_match(&cands, &m));
    }
    println!("infer time: {:?}", t1.elapsed());
    match froc(&scans) {
        Ok(r) => println!("seven-point {:?} CPM {:.3}", r.seven_point, r.cpm),
        Err(e) => println!("froc: {e}"),
    }
}
