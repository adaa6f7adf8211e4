use stylelab_core::data::{save_dataset, load_dataset, BenchmarkSpec, Sample};
use stylelab_core::models::{ModelConfig, SegNetwork, MixPattern, StyleParams};
use stylelab_core::nn::{Sgd, Tensor};
use stylelab_core::spectral::make_low_freq_mask;
use stylelab_core::train::{draw_styles, phase_reconstruction, AuxNets, RngStreams, StepCtx, TrainConfig};
use stylelab_core::losses::fsd_loss;

#[test]
#[ignore]
fn drift_probe() {
    let dir = tempfile::tempdir().unwrap();
    let spec = BenchmarkSpec { image_size: 32, source_train: 8, source_val: 4, target_domains: 1, target_samples: 2, ..Default::default() };
    save_dataset(dir.path(), &spec).unwrap();
    let data = load_dataset(dir.path()).unwrap();
    for seed in [11u64, 12, 13] {
      for lr in [1e-3f64, 3e-3] {
        let model = ModelConfig { in_channels: 1, classes: 3, seg_widths: [4,6,8], dropout: 0.1, recon_widths: [4,6,8], noise_dim: 8, noise_hidden: 16, mix_prob: 0.5, style_scale: 2.0 };
        let mut config = TrainConfig { recon_lr: lr, ..Default::default() };
        config.seed = seed;
        let mut seg_rng = stylelab_core::rng::stream(seed, "init-seg");
        let mut seg = SegNetwork::new(&model, &mut seg_rng).unwrap();
        let mut seg_opt = Sgd::new(config.seg_lr, config.seg_momentum);
        let mut aux = AuxNets::new(&model, &config, seed).unwrap();
        let mut rngs = RngStreams::from_seed(seed);
        let mask = make_low_freq_mask(32, 32, config.mask_ratio).unwrap();
        let pool = vec![data.train[0].clone()];
        let batch: Vec<&Sample> = pool.iter().collect();
        let mut probe_losses = Vec::new();
        let mut train_losses = Vec::new();
        for step in 0..60 {
            let mut ctx = StepCtx { seg: &mut seg, seg_opt: &mut seg_opt, aux: Some(&mut aux), rngs: &mut rngs, config: &config, model: &model, weights_now: config.fsd.decayed(0), mask: &mask, pool: &pool, epoch: 0, step };
            let styles = draw_styles(&mut ctx, 1);
            let l = phase_reconstruction(&mut ctx, &batch, &styles, true).unwrap();
            train_losses.push(l);
            // probe: plain path (no style)
            let x = Tensor::from_image(&pool[0].image);
            let y = aux.recon.forward(&x, None).unwrap();
            let img = y.to_image().unwrap();
            probe_losses.push(fsd_loss(&pool[0].image, &img, &config.fsd, &mask).unwrap());
        }
        println!("seed {seed} lr {lr} PROBE: {:?}", probe_losses.iter().map(|v| (v*100.0).round()/100.0).collect::<Vec<_>>());
      }
    }
}
