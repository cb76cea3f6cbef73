use wsrglow::audio::Waveform;
use wsrglow::config::RunConfig;
use wsrglow::flow::squeeze;
use wsrglow::model::{randomize_model, SrModel};
use wsrglow::rng::Rng;

fn main() {
    let cfg = RunConfig { iters: 0, ..Default::default() };
    let t0 = std::time::Instant::now();
    let mut worst = 0.0f32;
    for seed in 0..4u64 {
        let mut model: SrModel<f32> = SrModel::init(&cfg, &mut Rng::from_seed(seed)).unwrap();
        randomize_model(&mut model, &mut Rng::from_seed(seed ^ 0xabcd), 0.3);
        let mut rng = Rng::from_seed(seed ^ 0x1234);
        let lr = Waveform::new((0..32).map(|_| rng.uniform(-0.9, 0.9) as f32).collect(), cfg.lr_rate());
        let x: Vec<f32> = (0..64).map(|_| rng.uniform(-1.0, 1.0) as f32).collect();
        let cond = model.encoder.build_condition(&lr, cfg.ratio).unwrap();
        let res = model.flow.analyze(&x, &cond.channels).unwrap();
        let back = model.flow.generate(&res.z, &cond.channels).unwrap();
        let orig = squeeze(&x, 8).unwrap();
        let err = back.data().iter().zip(orig.data()).map(|(a, b)| (a - b).abs()).fold(0.0f32, f32::max);
        let zmax = res.z.data().iter().fold(0.0f32, |m, v| m.max(v.abs()));
        println!("seed {seed}: roundtrip err {err:.3e}, |z|max {zmax:.2}");
        worst = worst.max(err);
    }
    println!("worst {worst:.3e} in {:.1}s for 4 pairs", t0.elapsed().as_secs_f64());
}
