use canopy::eval::metrics;
use canopy::ingest::{assemble_scenario, synth_scene, ScenarioSpec, SyntheticSceneParams};
use canopy::models::Arch;
use canopy::preprocess::{fit_percentiles, percentile_normalize};
use canopy::train::{evaluate_samples, make_batch, Sample, TrainConfig, Trainer};

/// Every architecture must be able to memorize four tiles: training F1 above
/// 0.99 within 200 full-batch steps.
#[test]
fn every_arch_overfits_four_tiles() {
    let scenes: Vec<_> = (0..4)
        .map(|seed| synth_scene(&SyntheticSceneParams { seed, ..Default::default() }).unwrap())
        .collect();
    let chips: Vec<_> = scenes
        .iter()
        .map(|s| assemble_scenario(&s.features, ScenarioSpec::S1).unwrap())
        .collect();
    let stats = fit_percentiles(&chips).unwrap();
    let data: Vec<Sample> = scenes
        .iter()
        .zip(&chips)
        .enumerate()
        .map(|(i, (s, c))| Sample {
            tile_id: format!("t{i}"),
            period: "p".into(),
            features: percentile_normalize(c, &stats).unwrap().into_parts().1,
            labels: s.mask.labels().clone(),
        })
        .collect();
    let refs: Vec<&Sample> = data.iter().collect();
    for arch in Arch::ALL {
        let cfg = TrainConfig {
            arch,
            base_width: 8,
            depth: 3,
            learning_rate: 1e-3,
            batch_size: 4,
            ..Default::default()
        };
        let mut trainer = Trainer::new(cfg.clone()).unwrap();
        let mut reached = None;
        for step in 0..200 {
            let (x, y) = make_batch(&refs, None).unwrap();
            trainer.step(x, &y, step).unwrap();
            if step % 10 == 9 {
                let f1 = metrics(&evaluate_samples(&trainer.model, &data, &cfg).unwrap().1).unwrap().f1;
                if f1 > 0.99 {
                    reached = Some((step, f1));
                    break;
                }
            }
        }
        println!("{arch}: {reached:?}");
        assert!(reached.is_some(), "{arch} did not reach F1 0.99 in 200 steps");
    }
}
