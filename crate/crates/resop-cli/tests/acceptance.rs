//! Acceptance suite: one test per criterion, each printing a PASS line with
//! the measured quantities (run with `--nocapture` to see them).
//!
//! The heavy training criteria share one computed result set and take a
//! global lock so that concurrent tests never oversubscribe the cores while
//! per-run wall clocks are being measured.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use resop::analysis::{similarity_rank_curve, spearman};
use resop::autodiff::{gradient_check, Tape, Tensor};
use resop::datagen::{
    generate_darcy_coefficient, generate_darcy_dataset, relative_residual, solve_darcy,
    solve_darcy_field, Dataset, DarcyConfig, TrajectorySample,
};
use resop::field::{flatten_normalized, fourier_resample, GridField, GridShape};
use resop::model::{
    evaluate, evaluate_cross_resolution, init_model, loss_and_gradient, train, AuxRule,
    BatchItem, OperatorParams, OperatorSpec, TrainConfig, TrainMode,
};
use resop::residual::{assemble_input, build_residual_dataset, AuxiliaryPolicy};
use resop::retrieval::{
    distance, rank_neighbors, retrieve_inference, suggest_initial_k, RetrievalIndex,
    SimilarityMetric,
};
use std::f64::consts::PI;
use std::sync::{Mutex, OnceLock};
use std::time::Instant;

/// Serializes the training-heavy criteria so per-seed wall clocks are honest
/// on a small machine.
static HEAVY: Mutex<()> = Mutex::new(());

const DATA_SEED: u64 = 20260810;
const TRAIN_SEEDS: [u64; 5] = [0, 1, 2, 3, 4];

fn darcy_pool_config(resolution: usize, num_samples: usize) -> DarcyConfig {
    DarcyConfig {
        resolution,
        num_samples,
        seed: DATA_SEED,
        coefficient_low: 3.0,
        coefficient_high: 12.0,
        correlation_length: 0.35,
    }
}

fn fno_spec(modes: usize, in_channels: usize) -> OperatorSpec {
    OperatorSpec::fno(32, 4, modes, in_channels, 1)
}

/// One direct-vs-residual comparison at fixed seed; returns final test errors
/// and the two single-run wall clocks.
fn run_pair(
    train_set: &Dataset,
    test_set: &Dataset,
    index: &RetrievalIndex,
    modes: usize,
    seed: u64,
) -> PairOutcome {
    let policy = AuxiliaryPolicy::full();
    let (direct, residual) = std::thread::scope(|scope| {
        let direct = scope.spawn(move || {
            let cfg = TrainConfig::desk_default(TrainMode::Direct, seed);
            train(train_set, test_set, &fno_spec(modes, 1), &cfg, None).expect("direct run")
        });
        let residual = scope.spawn(move || {
            let cfg = TrainConfig::desk_default(TrainMode::Residual, seed);
            let spec = fno_spec(modes, AuxiliaryPolicy::full().network_input_channels(1, 1));
            train(train_set, test_set, &spec, &cfg, Some(index)).expect("residual run")
        });
        (direct.join().expect("join"), residual.join().expect("join"))
    });
    let _ = policy;
    PairOutcome {
        seed,
        direct_err: direct.1.final_test_rel_l2,
        residual_err: residual.1.final_test_rel_l2,
        direct_wall: direct.1.wall_seconds,
        residual_wall: residual.1.wall_seconds,
        direct_params: direct.0,
        residual_params: residual.0,
    }
}

struct PairOutcome {
    seed: u64,
    direct_err: f64,
    residual_err: f64,
    direct_wall: f64,
    residual_wall: f64,
    direct_params: OperatorParams,
    residual_params: OperatorParams,
}

fn gain_pp(direct: f64, residual: f64) -> f64 {
    (direct - residual) / direct * 100.0
}

struct MainExperiment {
    pool: Dataset,
    outcomes_120: Vec<PairOutcome>,
}

static MAIN_EXPERIMENT: OnceLock<MainExperiment> = OnceLock::new();

/// The criterion-6 experiment: 120/60 split at 32x32, five seeds. Shared by
/// criteria 6, 7 (the 120-sample arm) and 9 (the seed-0 residual model).
fn main_experiment() -> &'static MainExperiment {
    MAIN_EXPERIMENT.get_or_init(|| {
        let _guard = HEAVY.lock().unwrap();
        let pool = generate_darcy_dataset(&darcy_pool_config(32, 180), 1.0).expect("datagen");
        let (train_set, test_set) = pool.split(120, 60);
        let index = RetrievalIndex::build(&train_set, SimilarityMetric::CosineDistance);
        let outcomes = TRAIN_SEEDS
            .iter()
            .map(|&seed| run_pair(&train_set, &test_set, &index, 12, seed))
            .collect();
        MainExperiment {
            pool,
            outcomes_120: outcomes,
        }
    })
}

#[test]
fn acceptance_01_gradient_correctness() {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let mut rand_vec =
        |len: usize| -> Vec<f64> { (0..len).map(|_| rng.random_range(-1.0..1.0)).collect() };

    // Per-primitive checks on 8x8 instances through a probe loss.
    type Build = Box<dyn Fn(&mut Tape, &[f64]) -> (resop::autodiff::NodeId, Vec<resop::autodiff::NodeId>)>;
    let probe = |tape: &mut Tape, out, seed| {
        let len = tape.values(out).len();
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let probe_vals: Vec<f64> = (0..len).map(|_| r.random_range(-1.0..1.0)).collect();
        let p = tape.constant(Tensor::new(tape.shape(out).to_vec(), probe_vals));
        let m = tape.mul(out, p);
        tape.mean_reduce(m)
    };
    let n8 = 64usize;
    let cases: Vec<(&str, usize, Build)> = vec![
        ("add", 2 * n8, Box::new(move |t, th| {
            let a = t.constant(Tensor::param(vec![1, 8, 8], th[..n8].to_vec()));
            let b = t.constant(Tensor::param(vec![1, 8, 8], th[n8..].to_vec()));
            let y = t.add(a, b);
            (probe(t, y, 1), vec![a, b])
        })),
        ("sub", 2 * n8, Box::new(move |t, th| {
            let a = t.constant(Tensor::param(vec![1, 8, 8], th[..n8].to_vec()));
            let b = t.constant(Tensor::param(vec![1, 8, 8], th[n8..].to_vec()));
            let y = t.sub(a, b);
            (probe(t, y, 2), vec![a, b])
        })),
        ("mul", 2 * n8, Box::new(move |t, th| {
            let a = t.constant(Tensor::param(vec![1, 8, 8], th[..n8].to_vec()));
            let b = t.constant(Tensor::param(vec![1, 8, 8], th[n8..].to_vec()));
            let y = t.mul(a, b);
            (probe(t, y, 3), vec![a, b])
        })),
        ("scale", n8, Box::new(move |t, th| {
            let a = t.constant(Tensor::param(vec![1, 8, 8], th.to_vec()));
            let y = t.scale(a, -1.37);
            (probe(t, y, 4), vec![a])
        })),
        ("gelu", n8, Box::new(move |t, th| {
            let a = t.constant(Tensor::param(vec![1, 8, 8], th.to_vec()));
            let y = t.gelu(a);
            (probe(t, y, 5), vec![a])
        })),
        ("relu", n8, Box::new(move |t, th| {
            let shifted: Vec<f64> = th.iter().map(|v| if v.abs() < 0.05 { v + 0.1 } else { *v }).collect();
            let a = t.constant(Tensor::param(vec![1, 8, 8], shifted));
            let y = t.relu(a);
            (probe(t, y, 6), vec![a])
        })),
        ("mean_reduce", n8, Box::new(move |t, th| {
            let a = t.constant(Tensor::param(vec![1, 8, 8], th.to_vec()));
            let y = t.mean_reduce(a);
            (y, vec![a])
        })),
        ("l2_norm", n8, Box::new(move |t, th| {
            let a = t.constant(Tensor::param(vec![1, 8, 8], th.to_vec()));
            let y = t.l2_norm(a);
            (y, vec![a])
        })),
        ("channel_linear", 2 * n8 + 2 * 2 + 2, Box::new(move |t, th| {
            let x = t.constant(Tensor::param(vec![2, 8, 8], th[..2 * n8].to_vec()));
            let w = t.constant(Tensor::param(vec![2, 2], th[2 * n8..2 * n8 + 4].to_vec()));
            let b = t.constant(Tensor::param(vec![2], th[2 * n8 + 4..].to_vec()));
            let y = t.channel_linear(x, w, b);
            (probe(t, y, 7), vec![x, w, b])
        })),
        ("conv3x3", 2 * n8 + 2 * 2 * 9 + 2, Box::new(move |t, th| {
            let x = t.constant(Tensor::param(vec![2, 8, 8], th[..2 * n8].to_vec()));
            let w = t.constant(Tensor::param(vec![2, 2, 3, 3], th[2 * n8..2 * n8 + 36].to_vec()));
            let b = t.constant(Tensor::param(vec![2], th[2 * n8 + 36..].to_vec()));
            let y = t.conv3x3(x, w, b);
            (probe(t, y, 8), vec![x, w, b])
        })),
        ("spectral_conv", 2 * n8 + 2 * (2 * 2 * 4 * 4 * 2), Box::new(move |t, th| {
            let wlen = 2 * 2 * 4 * 4 * 2;
            let x = t.constant(Tensor::param(vec![2, 8, 8], th[..2 * n8].to_vec()));
            let wp = t.constant(Tensor::param(vec![2, 2, 4, 4, 2], th[2 * n8..2 * n8 + wlen].to_vec()));
            let wn = t.constant(Tensor::param(vec![2, 2, 4, 4, 2], th[2 * n8 + wlen..].to_vec()));
            let y = t.spectral_conv(x, wp, wn, 4, 4);
            (probe(t, y, 9), vec![x, wp, wn])
        })),
    ];

    let mut worst: (String, f64) = (String::new(), 0.0);
    for (name, len, build) in &cases {
        let theta = rand_vec(*len);
        let analytic = {
            let mut tape = Tape::new();
            let (loss, params) = build(&mut tape, &theta);
            let mut grads = tape.backward(loss);
            let mut flat = Vec::new();
            for p in params {
                let len = tape.values(p).len();
                flat.extend(grads.take(p).unwrap_or_else(|| vec![0.0; len]));
            }
            flat
        };
        let dev = gradient_check(
            |t| {
                let mut tape = Tape::new();
                let (loss, _) = build(&mut tape, t);
                tape.values(loss)[0]
            },
            &theta,
            &analytic,
            1e-5,
        );
        assert!(dev < 1e-4, "primitive {name}: deviation {dev}");
        if dev > worst.1 {
            worst = (name.to_string(), dev);
        }
    }

    // Full end-to-end residual-mode loss on a 2-sample 8x8 instance.
    let shape = GridShape::new(8, 8, 1).unwrap();
    let data = Dataset::new(
        (0..2)
            .map(|id| TrajectorySample {
                input: resop::datagen::smooth_random_field(8, 0.15, 70 + id as u64),
                output: resop::datagen::smooth_random_field(8, 0.3, 80 + id as u64),
                id,
            })
            .collect(),
    );
    assert_eq!(data.input_shape(), shape);
    let index = RetrievalIndex::build(&data, SimilarityMetric::CosineDistance);
    let policy = AuxiliaryPolicy::full();
    let mut prng = ChaCha8Rng::seed_from_u64(1);
    let pairs = build_residual_dataset(&data, &index, 1, &policy, &mut prng);
    let items: Vec<BatchItem> = pairs
        .iter()
        .enumerate()
        .map(|(i, p)| BatchItem {
            input: assemble_input(p, &policy),
            aux_solution: Some(p.aux_solution.clone()),
            truth: data.sample(i).output.clone(),
        })
        .collect();
    let mut params = init_model(&OperatorSpec::fno(4, 2, 3, 4, 1), 5);
    let theta = params.flat_values();
    let (_, grad) = loss_and_gradient(&params, &items);
    let dev = gradient_check(
        |t| {
            params.set_flat_values(t);
            loss_and_gradient(&params, &items).0
        },
        &theta,
        &grad,
        1e-5,
    );
    assert!(dev < 1e-4, "end-to-end deviation {dev}");
    let elapsed = started.elapsed().as_secs_f64();
    assert!(elapsed < 30.0, "gradient checks took {elapsed:.1}s");
    println!(
        "ACCEPTANCE 01 PASS gradient correctness: worst primitive {} at {:.2e}, end-to-end {:.2e}, {:.1}s",
        worst.0, worst.1, dev, elapsed
    );
}

#[test]
fn acceptance_02_zero_network_identity() {
    let spec = OperatorSpec::fno(8, 2, 3, 2, 1);
    let mut params = init_model(&spec, 3);
    params.zero_decoder();
    let input = resop::datagen::smooth_random_field(16, 0.2, 900);
    let input2 = resop::datagen::smooth_random_field(16, 0.25, 901);
    let stacked = GridField::concat_channels(&[&input, &input2]).unwrap();
    let aux = resop::datagen::smooth_random_field(16, 0.3, 902);
    let out = resop::model::forward(&params, &stacked, TrainMode::Residual, Some(&aux));
    let max_dev = out.max_abs_diff(&aux);
    assert!(max_dev < 1e-12, "zero-network deviation {max_dev}");
    println!("ACCEPTANCE 02 PASS zero-network identity: max abs deviation {max_dev:.2e}");
}

#[test]
fn acceptance_03_retrieval_oracle_equivalence() {
    let metrics = [
        SimilarityMetric::CosineDistance,
        SimilarityMetric::Euclidean,
        SimilarityMetric::Manhattan,
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut instances = 0;
    for case in 0..20u64 {
        let n = rng.random_range(10..=100);
        let shape = GridShape::new(6, 6, 1).unwrap();
        let data = Dataset::new(
            (0..n)
                .map(|id| {
                    let f = resop::datagen::smooth_random_field(6, 0.2, 5000 + case * 1000 + id as u64);
                    TrajectorySample {
                        input: f.clone(),
                        output: f,
                        id,
                    }
                })
                .collect(),
        );
        assert_eq!(data.input_shape(), shape);
        let metric = metrics[case as usize % 3];
        let index = RetrievalIndex::build(&data, metric);

        // rank_neighbors vs quadratic oracle, for a handful of queries.
        for qi in [0usize, n / 2, n - 1] {
            let q = flatten_normalized(&data.sample(qi).input);
            let got = rank_neighbors(&index, &q, Some(qi));
            let mut want: Vec<(usize, f64)> = (0..n)
                .filter(|&j| j != qi)
                .map(|j| (j, distance(&q, &flatten_normalized(&data.sample(j).input), metric)))
                .collect();
            want.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
            assert_eq!(got.entries, want, "rank_neighbors diverged (case {case})");
        }

        // retrieve_inference vs brute-force argmin on a fresh query.
        let query = resop::datagen::smooth_random_field(6, 0.2, 90_000 + case);
        let qv = flatten_normalized(&query);
        let want = (0..n)
            .map(|j| (j, distance(&qv, &flatten_normalized(&data.sample(j).input), metric)))
            .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
            .unwrap()
            .0;
        assert_eq!(retrieve_inference(&index, &query).id, want);

        // suggest_initial_k vs exhaustive scan over every rank.
        let n_test = rng.random_range(3..10);
        let test = Dataset::new(
            (0..n_test)
                .map(|id| {
                    let f = resop::datagen::smooth_random_field(6, 0.2, 70_000 + case * 100 + id as u64);
                    TrajectorySample {
                        input: f.clone(),
                        output: f,
                        id,
                    }
                })
                .collect(),
        );
        let got_k = suggest_initial_k(&data, &test, metric);
        let tv: Vec<_> = data
            .samples()
            .iter()
            .map(|s| flatten_normalized(&s.input))
            .collect();
        let s_max = test
            .samples()
            .iter()
            .map(|s| {
                let q = flatten_normalized(&s.input);
                tv.iter().map(|v| distance(&q, v, metric)).fold(f64::INFINITY, f64::min)
            })
            .fold(f64::NEG_INFINITY, f64::max);
        let mut want_k = n - 1;
        'scan: for r in 1..n {
            for i in 0..n {
                let mut d: Vec<f64> = (0..n)
                    .filter(|&j| j != i)
                    .map(|j| distance(&tv[i], &tv[j], metric))
                    .collect();
                d.sort_by(f64::total_cmp);
                if d[r - 1] < s_max {
                    continue 'scan;
                }
            }
            want_k = r;
            break;
        }
        assert_eq!(got_k, want_k, "suggest_initial_k diverged (case {case})");
        instances += 1;
    }
    println!("ACCEPTANCE 03 PASS retrieval oracle equivalence on {instances} instances x 3 operations");
}

#[test]
fn acceptance_04_solver_verification() {
    let manufactured_error = |n: usize| {
        let shape = GridShape::new(n, n, 1).unwrap();
        let a = GridField::constant(shape, 1.0);
        let h = 1.0 / (n - 1) as f64;
        let f = GridField::from_fn(shape, |_, y, x| {
            2.0 * PI * PI * (PI * y as f64 * h).sin() * (PI * x as f64 * h).sin()
        });
        let u = solve_darcy_field(&a, &f).unwrap();
        let mut err = 0.0f64;
        for y in 0..n {
            for x in 0..n {
                let exact = (PI * y as f64 * h).sin() * (PI * x as f64 * h).sin();
                err = err.max((u.at(0, y, x) - exact).abs());
            }
        }
        err
    };
    let ratio = manufactured_error(16) / manufactured_error(32);
    assert!(
        (3.2..=4.8).contains(&ratio),
        "convergence ratio {ratio} outside [3.2, 4.8]"
    );

    let cfg = darcy_pool_config(32, 10);
    let data = generate_darcy_dataset(&cfg, 1.0).unwrap();
    let mut worst = 0.0f64;
    for s in data.samples() {
        let f = GridField::constant(s.input.shape(), 1.0);
        worst = worst.max(relative_residual(&s.input, &s.output, &f));
    }
    assert!(worst < 1e-9, "emitted-sample residual {worst:.2e}");
    println!(
        "ACCEPTANCE 04 PASS solver verification: convergence ratio {ratio:.3}, worst residual {worst:.2e}"
    );
}

#[test]
fn acceptance_05_fourier_resampling() {
    // Single-mode upsample exactness.
    let coarse = GridField::from_fn(GridShape::new(16, 16, 1).unwrap(), |_, _, x| {
        (2.0 * PI * x as f64 / 16.0).sin()
    });
    let fine = fourier_resample(&coarse, GridShape::new(64, 64, 1).unwrap()).unwrap();
    let mut single_mode_dev = 0.0f64;
    for y in 0..64 {
        for x in 0..64 {
            let want = (2.0 * PI * x as f64 / 64.0).sin();
            single_mode_dev = single_mode_dev.max((fine.at(0, y, x) - want).abs());
        }
    }
    assert!(single_mode_dev < 1e-10, "single-mode deviation {single_mode_dev:.2e}");

    // Round trip on arbitrary fields.
    let f = resop::datagen::smooth_random_field(16, 0.05, 1234);
    let up = fourier_resample(&f, GridShape::new(64, 64, 1).unwrap()).unwrap();
    let back = fourier_resample(&up, GridShape::new(16, 16, 1).unwrap()).unwrap();
    let roundtrip_dev = f.max_abs_diff(&back);
    assert!(roundtrip_dev < 1e-10, "round-trip deviation {roundtrip_dev:.2e}");

    // Constant preservation.
    let c = GridField::constant(GridShape::new(16, 16, 1).unwrap(), 3.25);
    let up = fourier_resample(&c, GridShape::new(64, 64, 1).unwrap()).unwrap();
    let constant_dev = up
        .values()
        .iter()
        .map(|v| (v - 3.25).abs())
        .fold(0.0, f64::max);
    assert!(constant_dev < 1e-14, "constant deviation {constant_dev:.2e}");
    println!(
        "ACCEPTANCE 05 PASS fourier resampling: single-mode {single_mode_dev:.2e}, round-trip {roundtrip_dev:.2e}, constant {constant_dev:.2e}"
    );
}

#[test]
fn acceptance_06_direct_vs_residual_gain() {
    let exp = main_experiment();
    let mut wins = 0;
    let mut lines = Vec::new();
    for o in &exp.outcomes_120 {
        let win = o.residual_err <= o.direct_err;
        wins += usize::from(win);
        assert!(
            o.direct_wall < 900.0 && o.residual_wall < 900.0,
            "seed {}: runtime exceeded 15 minutes (direct {:.0}s, residual {:.0}s)",
            o.seed,
            o.direct_wall,
            o.residual_wall
        );
        lines.push(format!(
            "seed {}: direct {:.4e} residual {:.4e} gain {:+.2}pp ({})",
            o.seed,
            o.direct_err,
            o.residual_err,
            gain_pp(o.direct_err, o.residual_err),
            if win { "win" } else { "loss" }
        ));
    }
    for l in &lines {
        println!("  {l}");
    }
    assert!(wins >= 4, "residual won only {wins}/5 seeds");
    println!("ACCEPTANCE 06 PASS direct-vs-residual gain: residual wins {wins}/5 seeds");
}

#[test]
fn acceptance_07_small_data_amplification() {
    let exp = main_experiment();
    let gain_120: f64 = exp
        .outcomes_120
        .iter()
        .map(|o| gain_pp(o.direct_err, o.residual_err))
        .sum::<f64>()
        / 5.0;

    let outcomes_40 = {
        let _guard = HEAVY.lock().unwrap();
        let train_set = Dataset::new(exp.pool.samples()[..40].to_vec());
        let test_set = Dataset::new(exp.pool.samples()[120..180].to_vec());
        let index = RetrievalIndex::build(&train_set, SimilarityMetric::CosineDistance);
        TRAIN_SEEDS
            .iter()
            .map(|&seed| run_pair(&train_set, &test_set, &index, 12, seed))
            .collect::<Vec<_>>()
    };
    let gain_40: f64 = outcomes_40
        .iter()
        .map(|o| gain_pp(o.direct_err, o.residual_err))
        .sum::<f64>()
        / 5.0;
    for o in &outcomes_40 {
        println!(
            "  n=40 seed {}: direct {:.4e} residual {:.4e} gain {:+.2}pp",
            o.seed,
            o.direct_err,
            o.residual_err,
            gain_pp(o.direct_err, o.residual_err)
        );
    }
    assert!(
        gain_40 >= gain_120 - 2.0,
        "mean gain at 40 ({gain_40:.2}pp) fell more than 2pp below gain at 120 ({gain_120:.2}pp)"
    );
    println!(
        "ACCEPTANCE 07 PASS small-data amplification: mean gain {gain_40:.2}pp at n=40 vs {gain_120:.2}pp at n=120"
    );
}

#[test]
fn acceptance_08_resolution_generalization() {
    let _guard = HEAVY.lock().unwrap();
    // Train at 16x16 (modes 8, the Nyquist limit), evaluate at 64x64 through
    // the spectral retrieval/integration pathway.
    let pool = generate_darcy_dataset(&darcy_pool_config(16, 180), 1.0).expect("datagen");
    let (train_set, test_low) = pool.split(120, 60);
    let index = RetrievalIndex::build(&train_set, SimilarityMetric::CosineDistance);

    let mut hi_cfg = darcy_pool_config(64, 180);
    hi_cfg.resolution = 64;
    let test_hi = Dataset::new(
        (120..180)
            .map(|i| {
                let input = generate_darcy_coefficient(&hi_cfg, i);
                let output = solve_darcy(&input, 1.0).expect("solve");
                TrajectorySample {
                    input,
                    output,
                    id: i - 120,
                }
            })
            .collect(),
    );

    let policy = AuxiliaryPolicy::full();
    let mut wins = 0;
    for &seed in &TRAIN_SEEDS {
        let o = run_pair(&train_set, &test_low, &index, 8, seed);
        let direct_hi = evaluate_cross_resolution(
            &o.direct_params,
            &test_hi,
            &train_set,
            &index,
            TrainMode::Direct,
            &policy,
        )
        .unwrap();
        let residual_hi = evaluate_cross_resolution(
            &o.residual_params,
            &test_hi,
            &train_set,
            &index,
            TrainMode::Residual,
            &policy,
        )
        .unwrap();
        let win = residual_hi.mean <= direct_hi.mean;
        wins += usize::from(win);
        println!(
            "  seed {seed}: 64x64 direct {:.4e} residual {:.4e} ({})",
            direct_hi.mean,
            residual_hi.mean,
            if win { "win" } else { "loss" }
        );
    }
    assert!(wins >= 4, "residual won only {wins}/5 seeds at 64x64");
    println!("ACCEPTANCE 08 PASS resolution generalization: residual wins {wins}/5 seeds");
}

#[test]
fn acceptance_09_auxiliary_robustness() {
    let exp = main_experiment();
    let params = &exp.outcomes_120[0].residual_params;
    let train_set = Dataset::new(exp.pool.samples()[..120].to_vec());
    let test_set = Dataset::new(exp.pool.samples()[120..180].to_vec());
    let index = RetrievalIndex::build(&train_set, SimilarityMetric::CosineDistance);
    let policy = AuxiliaryPolicy::full();
    let mut means = Vec::new();
    for run in 1..=5u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(run);
        let m = evaluate(
            params,
            &test_set,
            TrainMode::Residual,
            Some((&train_set, &index)),
            &policy,
            AuxRule::RandomTopK(10),
            Some(&mut rng),
        );
        println!("  repeat {run}: mean rel L2 {:.6e}", m.mean);
        means.push(m.mean);
    }
    let mean = means.iter().sum::<f64>() / 5.0;
    let std = (means.iter().map(|m| (m - mean) * (m - mean)).sum::<f64>() / 4.0).sqrt();
    let relative = std / mean;
    assert!(
        relative < 0.05,
        "relative std {relative:.4} exceeds 5% (mean {mean:.4e}, std {std:.2e})"
    );
    println!(
        "ACCEPTANCE 09 PASS auxiliary robustness: mean {mean:.4e}, std {std:.2e}, relative {:.2}%",
        relative * 100.0
    );
}

#[test]
fn acceptance_10_similarity_rank_monotonicity() {
    let pool = generate_darcy_dataset(&darcy_pool_config(32, 240), 1.0).expect("datagen");
    let (train_set, test_set) = pool.split(200, 40);
    let curve = similarity_rank_curve(&train_set, &test_set, 40, SimilarityMetric::CosineDistance);
    let ranks: Vec<f64> = curve.ranks.iter().map(|&r| r as f64).collect();
    let rho = spearman(&ranks, &curve.mean_distance);
    assert!(rho > 0.5, "Spearman correlation {rho:.3} below 0.5");
    println!("ACCEPTANCE 10 PASS similarity-rank monotonicity: Spearman rho {rho:.3} over ranks 1..40");
}

#[test]
fn acceptance_11_cli_determinism() {
    let bin = env!("CARGO_BIN_EXE_resop");
    let dir = tempfile::tempdir().unwrap();
    let make_config = |name: &str| {
        let out = dir.path().join(name);
        let text = format!(
            r#"
output_dir = "{out}"
seed = 77

[data]
kind = "darcy"
path = "{out}/dataset.dphi"
resolution = 16
num_train = 14
num_test = 6
correlation_length = 0.3

[model]
architecture = "fno"
width = 8
depth = 2
modes = 4

[train]
epochs = 3
batch_size = 4
mode = "residual"

[retrieval]
k = 6

[analysis]
max_rank = 10
"#,
            out = out.display()
        );
        let path = dir.path().join(format!("{name}.toml"));
        std::fs::write(&path, text).unwrap();
        (path, out)
    };

    let commands = [
        "datagen",
        "train",
        "eval",
        "eval-robust",
        "analyze-rank",
        "analyze-pca",
        "compare",
    ];
    let (cfg_a, out_a) = make_config("a");
    let (cfg_b, out_b) = make_config("b");
    for cfg in [&cfg_a, &cfg_b] {
        for cmd in commands {
            let out = std::process::Command::new(bin)
                .arg(cmd)
                .arg("--config")
                .arg(cfg)
                .output()
                .unwrap();
            assert!(
                out.status.success(),
                "{cmd} failed: {}",
                String::from_utf8_lossy(&out.stderr)
            );
        }
    }
    let artifacts = [
        "dataset.dphi",
        "model.dphm",
        "train_report.csv",
        "eval_report.csv",
        "eval_summary.csv",
        "robust_report.csv",
        "robust_summary.csv",
        "rank_curve.csv",
        "pca_direct_points.csv",
        "pca_direct_stats.csv",
        "pca_residual_points.csv",
        "pca_residual_stats.csv",
        "model_direct.dphm",
        "model_residual.dphm",
        "train_report_direct.csv",
        "train_report_residual.csv",
        "compare_report.csv",
    ];
    for a in artifacts {
        let left = std::fs::read(out_a.join(a)).unwrap_or_else(|_| panic!("missing {a}"));
        let right = std::fs::read(out_b.join(a)).unwrap();
        assert_eq!(left, right, "artifact {a} differs between identical runs");
    }
    println!(
        "ACCEPTANCE 11 PASS determinism: {} artifacts byte-identical across independent runs",
        artifacts.len()
    );
}
