// Compare train-mode (batch stats) and eval-mode (running stats) forwards
// at the ground-truth cell after a short training run.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use vatn::data::{synth_generate, SynthConfig, Volume};
use vatn::detect::{train_rpn, RpnConfig, RpnModel, RpnTrainConfig};
use vatn::graph::{Graph, Mode, ParamStore};
use vatn::tensor::Tensor;

fn main() {
    let gen = |seed: u64| -> Volume {
        synth_generate(&SynthConfig {
            volume_size: [64; 3],
            nodule_count: [1, 2],
            seed,
            ..Default::default()
        })
        .unwrap()
    };
    let train_vols: Vec<Volume> = (0..12).map(|i| gen(1000 + i)).collect();
    let eval_v = gen(9000);

    let mut store = ParamStore::<f32>::new();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut cfg = RpnConfig::desk();
    cfg.patch = 64;
    let model = RpnModel::build(&mut store, cfg, &mut rng).unwrap();
    let tcfg = RpnTrainConfig {
        epochs: 10,
        batch_size: 2,
        patches_per_volume: 2,
        patch: 64,
        seed: 3,
        ..RpnTrainConfig::desk()
    };
    train_rpn(&model, &mut store, &train_vols, &tcfg).unwrap();

    let s = eval_v.shape();
    let x_t = eval_v.intensities.reshape(vec![1, 1, s[0], s[1], s[2]]);
    for mode in [Mode::Eval, Mode::Train] {
        let mut g = Graph::with_seed(mode, 1234);
        let x = g.input(x_t.clone());
        let out = model.forward(&mut g, &store, x);
        let cls = g.value(out.cls);
        let grid = cls.shape()[2];
        let cells = grid * grid * grid;
        let data = cls.data();
        let sig = |l: f32| 1.0 / (1.0 + (-l).exp());
        let mut all: Vec<f32> = data.iter().map(|&l| sig(l)).collect();
        all.sort_by(|a, b| b.partial_cmp(a).unwrap());
        println!("{mode:?}: max {:.3} p50 {:.3} p90 {:.3}", all[0], all[cells * 3 / 2], all[cells * 3 / 10]);
        for gt in &eval_v.annotations {
            let cell = |v: f64| ((v / 8.0) as usize).min(grid - 1);
            let (cz, cy, cx) = (cell(gt.z), cell(gt.y), cell(gt.x));
            for a in 0..3 {
                let idx = a * cells + (cz * grid + cy) * grid + cx;
                print!("  gt d={:.1} anchor{a}: p={:.3}", gt.d, sig(data[idx]));
            }
            println!();
        }
    }
}
