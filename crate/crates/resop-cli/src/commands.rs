//! Subcommand implementations. Every command writes deterministic artifacts
//! into the configured output directory; progress goes to standard error.

use crate::config::{DataKind, ExperimentConfig};
use anyhow::{bail, Context, Result};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use resop::analysis::{
    label_distribution_study, similarity_rank_curve, svg_label_distribution, svg_rank_curve,
    write_distribution_points_csv, write_distribution_stats_csv, write_rank_curve_csv,
};
use resop::datagen::{
    generate_darcy_coefficient, generate_darcy_dataset, generate_timeseries,
    generate_timeseries_dataset, load_dataset, save_dataset, solve_darcy, Dataset,
    TrajectorySample,
};
use resop::field::flatten_normalized;
use resop::model::{
    evaluate, evaluate_cross_resolution, load_model, save_model, train, AuxRule, EvalMetrics,
    OperatorParams, TrainMode, TrainReport,
};
use resop::residual::build_residual_dataset;
use resop::retrieval::{rank_neighbors, suggest_initial_k, RetrievalIndex};
use std::path::Path;

fn ensure_output_dir(config: &ExperimentConfig) -> Result<()> {
    std::fs::create_dir_all(&config.output_dir).with_context(|| {
        format!("cannot create output directory {}", config.output_dir.display())
    })
}

fn write_artifact(path: &Path, content: &str) -> Result<()> {
    std::fs::write(path, content).with_context(|| format!("cannot write {}", path.display()))?;
    eprintln!("wrote {}", path.display());
    Ok(())
}

fn load_split(config: &ExperimentConfig) -> Result<(Dataset, Dataset)> {
    let dataset = load_dataset(&config.data.path)
        .with_context(|| format!("cannot load dataset {}", config.data.path.display()))?;
    if dataset.len() != config.num_samples() {
        bail!(
            "dataset {} holds {} samples, config expects num_train+num_test = {}",
            config.data.path.display(),
            dataset.len(),
            config.num_samples()
        );
    }
    let shape = dataset.input_shape();
    if (shape.height, shape.width) != (config.data.resolution, config.data.resolution) {
        bail!(
            "dataset resolution {}x{} does not match config resolution {}",
            shape.height,
            shape.width,
            config.data.resolution
        );
    }
    Ok(dataset.split(config.data.num_train, config.data.num_test))
}

fn format_gain(direct: f64, residual: f64) -> String {
    format!("{:.2}%", (direct - residual) / direct * 100.0)
}

fn train_report_csv(report: &TrainReport) -> String {
    let mut out = String::from("epoch,lr,train_loss,test_rel_l2\n");
    for e in 0..report.train_loss.len() {
        out.push_str(&format!(
            "{e},{},{},{}\n",
            report.lr[e], report.train_loss[e], report.test_rel_l2[e]
        ));
    }
    out
}

fn eval_report_csv(test_set: &Dataset, metrics: &EvalMetrics) -> String {
    let mut out = String::from("sample_id,rel_l2,aux_id,degenerate\n");
    for (i, sample) in test_set.samples().iter().enumerate() {
        let aux = metrics.aux_ids[i]
            .map(|a| a.to_string())
            .unwrap_or_else(|| "-1".to_string());
        out.push_str(&format!(
            "{},{},{aux},{}\n",
            sample.id, metrics.per_sample[i], metrics.degenerate[i]
        ));
    }
    out
}

pub fn datagen(config: &ExperimentConfig) -> Result<()> {
    ensure_output_dir(config)?;
    if let Some(parent) = config.data.path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    let dataset = generate_dataset(config)?;
    save_dataset(&dataset, &config.data.path)
        .with_context(|| format!("cannot write dataset {}", config.data.path.display()))?;
    eprintln!(
        "generated {} samples at {} -> {}",
        dataset.len(),
        dataset.input_shape(),
        config.data.path.display()
    );
    Ok(())
}

fn generate_dataset(config: &ExperimentConfig) -> Result<Dataset> {
    Ok(match config.data.kind {
        DataKind::Darcy => generate_darcy_dataset(&config.darcy_config(), config.data.forcing)?,
        DataKind::Timeseries => generate_timeseries_dataset(&config.timeseries_config())?,
    })
}

pub fn index(config: &ExperimentConfig) -> Result<()> {
    ensure_output_dir(config)?;
    let (train_set, _) = load_split(config)?;
    let index = RetrievalIndex::build(&train_set, config.metric());
    let mut out = String::from("sample_id,nearest_id,distance,degenerate\n");
    for i in 0..index.len() {
        let ranked = rank_neighbors(&index, index.vector(i), Some(i));
        let (nearest, dist) = ranked.entries[0];
        out.push_str(&format!(
            "{i},{nearest},{dist},{}\n",
            index.vector(i).degenerate
        ));
    }
    write_artifact(&config.output_dir.join("index_report.csv"), &out)
}

pub fn suggest_k(config: &ExperimentConfig) -> Result<()> {
    ensure_output_dir(config)?;
    let (train_set, test_set) = load_split(config)?;
    let k = suggest_initial_k(&train_set, &test_set, config.metric());
    let out = format!(
        "metric,n_train,n_test,suggested_k\n{:?},{},{},{k}\n",
        config.retrieval.metric,
        train_set.len(),
        test_set.len()
    );
    eprintln!("suggested initial sampling range: {k}");
    write_artifact(&config.output_dir.join("suggest_k.csv"), &out)
}

fn run_training(
    config: &ExperimentConfig,
    mode: TrainMode,
    train_set: &Dataset,
    test_set: &Dataset,
    index: Option<&RetrievalIndex>,
) -> Result<(OperatorParams, TrainReport)> {
    let spec = config.operator_spec(
        mode,
        train_set.input_shape().channels,
        train_set.output_shape().channels,
    );
    let cfg = config.train_config(mode);
    let (params, report) = train(train_set, test_set, &spec, &cfg, index)?;
    eprintln!(
        "{} training: final test rel L2 {:.6e} ({:.1}s, {} epochs)",
        match mode {
            TrainMode::Direct => "direct",
            TrainMode::Residual => "residual",
        },
        report.final_test_rel_l2,
        report.wall_seconds,
        cfg.epochs
    );
    Ok((params, report))
}

pub fn train_cmd(config: &ExperimentConfig) -> Result<()> {
    ensure_output_dir(config)?;
    let (train_set, test_set) = load_split(config)?;
    let mode = config.mode();
    let index = match mode {
        TrainMode::Direct => None,
        TrainMode::Residual => Some(RetrievalIndex::build(&train_set, config.metric())),
    };
    let (params, report) = run_training(config, mode, &train_set, &test_set, index.as_ref())?;
    save_model(&params, &config.output_dir.join("model.dphm"))?;
    eprintln!("wrote {}", config.output_dir.join("model.dphm").display());
    write_artifact(
        &config.output_dir.join("train_report.csv"),
        &train_report_csv(&report),
    )
}

pub fn eval(config: &ExperimentConfig) -> Result<()> {
    ensure_output_dir(config)?;
    let (train_set, test_set) = load_split(config)?;
    let model_path = config.output_dir.join("model.dphm");
    let params = load_model(&model_path)
        .with_context(|| format!("cannot load checkpoint {}", model_path.display()))?;
    let mode = config.mode();
    let index;
    let aux_source = match mode {
        TrainMode::Direct => None,
        TrainMode::Residual => {
            index = RetrievalIndex::build(&train_set, config.metric());
            Some((&train_set, &index))
        }
    };
    let metrics = evaluate(
        &params,
        &test_set,
        mode,
        aux_source,
        &config.policy(),
        AuxRule::Best,
        None,
    );
    eprintln!("mean test rel L2: {:.6e}", metrics.mean);
    write_artifact(
        &config.output_dir.join("eval_report.csv"),
        &eval_report_csv(&test_set, &metrics),
    )?;
    write_artifact(
        &config.output_dir.join("eval_summary.csv"),
        &format!("mean_rel_l2,n_test\n{},{}\n", metrics.mean, test_set.len()),
    )
}

/// Five repeated evaluations with random top-10 auxiliaries on one trained
/// residual model; reports per-run means and their dispersion.
pub fn eval_robust(config: &ExperimentConfig) -> Result<()> {
    ensure_output_dir(config)?;
    if config.mode() != TrainMode::Residual {
        bail!("eval-robust requires train.mode = \"residual\"");
    }
    let (train_set, test_set) = load_split(config)?;
    let model_path = config.output_dir.join("model.dphm");
    let params = load_model(&model_path)
        .with_context(|| format!("cannot load checkpoint {}", model_path.display()))?;
    let index = RetrievalIndex::build(&train_set, config.metric());

    let mut means = Vec::with_capacity(5);
    let mut out = String::from("run,mean_rel_l2\n");
    for run in 1..=5u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed + run);
        let metrics = evaluate(
            &params,
            &test_set,
            TrainMode::Residual,
            Some((&train_set, &index)),
            &config.policy(),
            AuxRule::RandomTopK(10),
            Some(&mut rng),
        );
        out.push_str(&format!("{run},{}\n", metrics.mean));
        means.push(metrics.mean);
    }
    let mean = means.iter().sum::<f64>() / means.len() as f64;
    let var = means.iter().map(|m| (m - mean) * (m - mean)).sum::<f64>() / (means.len() - 1) as f64;
    let std = var.sqrt();
    let relative = std / mean;
    eprintln!("robustness: mean {mean:.6e}, std {std:.3e}, relative {relative:.4}");
    write_artifact(&config.output_dir.join("robust_report.csv"), &out)?;
    write_artifact(
        &config.output_dir.join("robust_summary.csv"),
        &format!("mean,std,relative_std\n{mean},{std},{relative}\n"),
    )
}

/// Independently generated test problems at a finer grid, solved at that
/// grid; sample seeds continue past the training pool indices.
fn generate_high_res_test(config: &ExperimentConfig, resolution: usize) -> Result<Dataset> {
    let first = config.data.num_train;
    let count = config.data.num_test;
    let mut samples = Vec::with_capacity(count);
    match config.data.kind {
        DataKind::Darcy => {
            let mut cfg = config.darcy_config();
            cfg.resolution = resolution;
            for i in 0..count {
                let input = generate_darcy_coefficient(&cfg, first + i);
                let output = solve_darcy(&input, config.data.forcing)?;
                samples.push(TrajectorySample { input, output, id: i });
            }
        }
        DataKind::Timeseries => {
            let mut cfg = config.timeseries_config();
            cfg.resolution = resolution;
            for i in 0..count {
                let mut s = generate_timeseries(&cfg, first + i)?;
                s.id = i;
                samples.push(s);
            }
        }
    }
    Ok(Dataset::new(samples))
}

/// Zero-shot resolution generalization: train both modes at the coarse
/// resolution, evaluate both at the fine one through the spectral pathway.
pub fn genres(config: &ExperimentConfig) -> Result<()> {
    ensure_output_dir(config)?;
    let Some(genres_cfg) = &config.genres else {
        bail!("genres requires a [genres] section with eval_resolution");
    };
    let (train_set, test_set_low) = load_split(config)?;
    let eval_resolution = genres_cfg.eval_resolution;
    eprintln!("generating {}x{eval_resolution} test problems", eval_resolution);
    let test_hi = generate_high_res_test(config, eval_resolution)?;
    save_dataset(&test_hi, &config.genres_eval_path())?;
    eprintln!("wrote {}", config.genres_eval_path().display());

    let index = RetrievalIndex::build(&train_set, config.metric());
    let (direct, residual) = std::thread::scope(|scope| {
        let direct = scope.spawn(|| {
            run_training(config, TrainMode::Direct, &train_set, &test_set_low, None)
        });
        let residual = scope.spawn(|| {
            run_training(
                config,
                TrainMode::Residual,
                &train_set,
                &test_set_low,
                Some(&index),
            )
        });
        (direct.join().expect("direct run"), residual.join().expect("residual run"))
    });
    let (direct_params, _) = direct?;
    let (residual_params, _) = residual?;

    let policy = config.policy();
    let direct_hi = evaluate_cross_resolution(
        &direct_params,
        &test_hi,
        &train_set,
        &index,
        TrainMode::Direct,
        &policy,
    )?;
    let residual_hi = evaluate_cross_resolution(
        &residual_params,
        &test_hi,
        &train_set,
        &index,
        TrainMode::Residual,
        &policy,
    )?;
    eprintln!(
        "cross-resolution: direct {:.6e}, residual {:.6e}",
        direct_hi.mean, residual_hi.mean
    );
    write_artifact(
        &config.output_dir.join("genres_report.csv"),
        &format!(
            "train_resolution,eval_resolution,direct_rel_l2,residual_rel_l2,relative_gain\n{},{eval_resolution},{},{},{}\n",
            config.data.resolution,
            direct_hi.mean,
            residual_hi.mean,
            format_gain(direct_hi.mean, residual_hi.mean)
        ),
    )
}

pub fn analyze_rank(config: &ExperimentConfig) -> Result<()> {
    ensure_output_dir(config)?;
    let max_rank = config
        .analysis
        .as_ref()
        .map(|a| a.max_rank)
        .unwrap_or(40)
        .min(config.data.num_train);
    let (train_set, test_set) = load_split(config)?;
    let curve = similarity_rank_curve(&train_set, &test_set, max_rank, config.metric());
    write_artifact(
        &config.output_dir.join("rank_curve.csv"),
        &write_rank_curve_csv(&curve),
    )?;
    write_artifact(
        &config.output_dir.join("rank_curve.svg"),
        &svg_rank_curve(&curve, "output distance vs input-similarity rank"),
    )
}

pub fn analyze_pca(config: &ExperimentConfig) -> Result<()> {
    ensure_output_dir(config)?;
    let (train_set, test_set) = load_split(config)?;
    let index = RetrievalIndex::build(&train_set, config.metric());
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let pairs = build_residual_dataset(
        &train_set,
        &index,
        config.retrieval.k,
        &config.policy(),
        &mut rng,
    );
    let (direct, residual) = label_distribution_study(&train_set, &pairs, &test_set, &index);
    for (name, ld, title) in [
        ("pca_direct", &direct, "direct labels"),
        ("pca_residual", &residual, "residual labels"),
    ] {
        write_artifact(
            &config.output_dir.join(format!("{name}_points.csv")),
            &write_distribution_points_csv(ld),
        )?;
        write_artifact(
            &config.output_dir.join(format!("{name}_stats.csv")),
            &write_distribution_stats_csv(ld),
        )?;
        write_artifact(
            &config.output_dir.join(format!("{name}.svg")),
            &svg_label_distribution(ld, title),
        )?;
    }
    Ok(())
}

/// Trains the direct and residual formulations under identical settings and
/// reports the relative gain.
pub fn compare(config: &ExperimentConfig) -> Result<()> {
    ensure_output_dir(config)?;
    let (train_set, test_set) = load_split(config)?;
    let index = RetrievalIndex::build(&train_set, config.metric());
    let (direct, residual) = std::thread::scope(|scope| {
        let direct =
            scope.spawn(|| run_training(config, TrainMode::Direct, &train_set, &test_set, None));
        let residual = scope.spawn(|| {
            run_training(
                config,
                TrainMode::Residual,
                &train_set,
                &test_set,
                Some(&index),
            )
        });
        (direct.join().expect("direct run"), residual.join().expect("residual run"))
    });
    let (direct_params, direct_report) = direct?;
    let (residual_params, residual_report) = residual?;

    save_model(&direct_params, &config.output_dir.join("model_direct.dphm"))?;
    save_model(&residual_params, &config.output_dir.join("model_residual.dphm"))?;
    write_artifact(
        &config.output_dir.join("train_report_direct.csv"),
        &train_report_csv(&direct_report),
    )?;
    write_artifact(
        &config.output_dir.join("train_report_residual.csv"),
        &train_report_csv(&residual_report),
    )?;
    let e_d = direct_report.final_test_rel_l2;
    let e_r = residual_report.final_test_rel_l2;
    eprintln!(
        "direct {e_d:.6e}  residual {e_r:.6e}  gain {}",
        format_gain(e_d, e_r)
    );
    write_artifact(
        &config.output_dir.join("compare_report.csv"),
        &format!(
            "direct_rel_l2,residual_rel_l2,relative_gain\n{e_d},{e_r},{}\n",
            format_gain(e_d, e_r)
        ),
    )
}

/// Degeneracy diagnostics used by tests: true when any training input is a
/// constant field.
pub fn any_degenerate_inputs(dataset: &Dataset) -> bool {
    dataset
        .samples()
        .iter()
        .any(|s| flatten_normalized(&s.input).degenerate)
}
