use resop::datagen::{generate_darcy_dataset, DarcyConfig};
use resop::model::{train, OperatorSpec, TrainConfig, TrainMode};
use resop::residual::AuxiliaryPolicy;
use resop::retrieval::{RetrievalIndex, SimilarityMetric};

#[test]
#[ignore]
fn probe_criterion6() {
    let cfg = DarcyConfig {
        resolution: 32,
        num_samples: 180,
        seed: 424242,
        coefficient_low: 3.0,
        coefficient_high: 12.0,
        correlation_length: 0.35,
    };
    let t0 = std::time::Instant::now();
    let pool = generate_darcy_dataset(&cfg, 1.0).unwrap();
    eprintln!("datagen: {:.1}s", t0.elapsed().as_secs_f64());
    let (train_set, test_set) = pool.split(120, 60);
    let index = RetrievalIndex::build(&train_set, SimilarityMetric::CosineDistance);
    let policy = AuxiliaryPolicy::full();

    for seed in [0u64, 1] {
        let direct_spec = OperatorSpec::fno(32, 4, 12, 1, 1);
        let dcfg = TrainConfig::desk_default(TrainMode::Direct, seed);
        let t = std::time::Instant::now();
        let (_, dreport) = train(&train_set, &test_set, &direct_spec, &dcfg, None).unwrap();
        eprintln!(
            "seed {seed} direct:   {:.4e}  ({:.0}s)  e10={:.3e} e30={:.3e}",
            dreport.final_test_rel_l2,
            t.elapsed().as_secs_f64(),
            dreport.test_rel_l2[10],
            dreport.test_rel_l2[30]
        );
        let res_spec = OperatorSpec::fno(32, 4, 12, policy.network_input_channels(1, 1), 1);
        let rcfg = TrainConfig::desk_default(TrainMode::Residual, seed);
        let t = std::time::Instant::now();
        let (_, rreport) = train(&train_set, &test_set, &res_spec, &rcfg, Some(&index)).unwrap();
        eprintln!(
            "seed {seed} residual: {:.4e}  ({:.0}s)  e10={:.3e} e30={:.3e}",
            rreport.final_test_rel_l2,
            t.elapsed().as_secs_f64(),
            rreport.test_rel_l2[10],
            rreport.test_rel_l2[30]
        );
    }
}
