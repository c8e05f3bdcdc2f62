//! Subcommand implementations.

use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use pointrank_core::backbone::encode_value;
use pointrank_core::data::{make_dataset, split_dataset, LabeledDataset, ShapeClass};
use pointrank_core::eval::{
    classify_eval_prepared, learned_ordering, prepare_selection, reconstruct_eval_prepared,
    retrieval_map_eval_prepared, MetricCurve, MetricKind, PreparedSelection, SelectionMethod,
};
use pointrank_core::scorer::score_soft;
use pointrank_core::sorter::{build_cost, sinkhorn};
use pointrank_core::tasks::{
    train_autoencoder, train_classifier, AutoencoderConfig, ClassifierConfig,
};
use pointrank_core::tensor::Tensor2;
use pointrank_core::train::{master_rng, train_epoch, AdamWState, Model, Snapshot};

use crate::checkpoint;
use crate::config::{train_keys, usage_err, RunConfig};
use crate::ordering_file::save_ordering;
use crate::report::curve_report;
use crate::threads::parallel_map;
use crate::xyz::{load_dataset, load_xyz, write_dataset, Split};

fn classes_from_ids(ids: &[usize]) -> Result<Vec<ShapeClass>> {
    ids.iter()
        .map(|&id| ShapeClass::from_id(id).map_err(|e| usage_err(format!("data.classes: {e}"))))
        .collect()
}

pub fn gen_data(cfg: &RunConfig, out: &Path) -> Result<()> {
    let classes = classes_from_ids(&cfg.data.classes)?;
    let full = make_dataset(&classes, cfg.data.clouds_per_class, cfg.data.n_points, cfg.data.seed)?;
    let zero_shot = (!cfg.data.zero_shot_classes.is_empty())
        .then_some(cfg.data.zero_shot_classes.as_slice());
    let (train, test) = split_dataset(&full, cfg.data.train_fraction, cfg.data.seed, zero_shot)?;

    let dir = out.join("dataset");
    let entries = write_dataset(&dir, &train, &test)?;
    println!(
        "wrote {} clouds ({} train, {} test, {} points each) to {}",
        entries.len(),
        train.len(),
        test.len(),
        cfg.data.n_points,
        dir.display()
    );
    Ok(())
}

pub fn train(
    cfg: &RunConfig,
    out: &Path,
    data_dir: &Path,
    resume: Option<&Path>,
    save_every: Option<usize>,
) -> Result<()> {
    let data = load_dataset(data_dir, Split::Train)?;
    if data.is_empty() {
        bail!("{}: no training clouds", data_dir.display());
    }

    let (mut model, mut opt, rng, start_epoch, train_cfg) = match resume {
        Some(path) => {
            let ckpt = checkpoint::load(path)?;
            let (model, opt, rng) = ckpt.snapshot.restore(ckpt.train.model.clone())?;
            println!(
                "resuming from {} at epoch {}",
                path.display(),
                ckpt.snapshot.epoch
            );
            (model, opt, rng, ckpt.snapshot.epoch as usize, ckpt.train)
        }
        None => {
            let mut rng = master_rng(cfg.train.seed);
            let model = Model::init(cfg.train.model.clone(), &mut rng);
            (model, AdamWState::new(), rng, 0, cfg.train.clone())
        }
    };
    let mut run_cfg = cfg.clone();
    run_cfg.train = train_cfg;

    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let metrics_path = out.join("metrics.csv");
    let mut metrics = String::new();
    if start_epoch == 0 || !metrics_path.exists() {
        metrics.push_str("epoch,mean_loss,lr\n");
    }

    let started = Instant::now();
    for epoch in start_epoch..run_cfg.train.epochs {
        let stats = train_epoch(&mut model, &mut opt, &data, &run_cfg.train, epoch)?;
        metrics.push_str(&format!("{},{:.9},{:.9e}\n", epoch, stats.mean_loss, stats.lr));
        println!(
            "epoch {:>4}/{} loss {:.6} lr {:.3e}",
            epoch + 1,
            run_cfg.train.epochs,
            stats.mean_loss,
            stats.lr
        );
        if let Some(every) = save_every {
            if every > 0 && (epoch + 1) % every == 0 {
                let snap = Snapshot::capture(&model, &opt, epoch as u64 + 1, &rng);
                checkpoint::save(
                    &out.join(format!("checkpoint_epoch_{:04}.prnk", epoch + 1)),
                    &snap,
                    &train_keys(&run_cfg),
                )?;
            }
        }
    }

    let existing = if start_epoch > 0 && metrics_path.exists() {
        std::fs::read_to_string(&metrics_path)?
    } else {
        String::new()
    };
    std::fs::write(&metrics_path, existing + &metrics)?;

    let snap = Snapshot::capture(&model, &opt, run_cfg.train.epochs as u64, &rng);
    let ckpt_path = out.join("checkpoint.prnk");
    checkpoint::save(&ckpt_path, &snap, &train_keys(&run_cfg))?;
    println!(
        "trained {} epochs in {:.1}s; checkpoint {} metrics {}",
        run_cfg.train.epochs - start_epoch,
        started.elapsed().as_secs_f64(),
        ckpt_path.display(),
        metrics_path.display()
    );
    Ok(())
}

pub fn order(out: &Path, checkpoint_path: &Path, cloud_path: &Path, output: Option<&Path>) -> Result<()> {
    let ckpt = checkpoint::load(checkpoint_path)?;
    let (model, _, _) = ckpt.snapshot.restore(ckpt.train.model.clone())?;
    let cloud = load_xyz(cloud_path)?;
    let normalized = pointrank_core::data::normalize_unit_sphere(&cloud);

    let ordering = learned_ordering(&model, &ckpt.train.scorer, &ckpt.train.sinkhorn, &normalized)
        .map_err(|e| anyhow!("ordering failed: {e}"))?;

    let default_path = out.join("ordering.txt");
    let path = output.unwrap_or(&default_path);
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    save_ordering(&ordering, path)?;
    println!("wrote ordering of {} points to {}", cloud.len(), path.display());
    Ok(())
}

fn prepare_parallel(
    method: &SelectionMethod<'_>,
    data: &LabeledDataset,
    threads: usize,
) -> Result<Vec<PreparedSelection>> {
    let results = parallel_map(&data.clouds, threads, |idx, cloud| {
        prepare_selection(method, cloud, idx)
    });
    results
        .into_iter()
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| anyhow!("selection failed: {e}"))
}

pub fn eval(
    cfg: &RunConfig,
    out: &Path,
    checkpoint_path: &Path,
    data_dir: &Path,
    threads: usize,
) -> Result<()> {
    let ckpt = checkpoint::load(checkpoint_path)?;
    let (model, _, _) = ckpt.snapshot.restore(ckpt.train.model.clone())?;
    let train_split = load_dataset(data_dir, Split::Train)?;
    let test_split = load_dataset(data_dir, Split::Test)?;
    if train_split.is_empty() || test_split.is_empty() {
        bail!("{}: need both train and test clouds", data_dir.display());
    }
    let sizes = validated_sizes(&cfg.eval.sizes, &test_split)?;
    let num_classes = train_split
        .labels
        .iter()
        .chain(&test_split.labels)
        .max()
        .map(|&m| m + 1)
        .unwrap_or(1);

    let methods: Vec<SelectionMethod> = vec![
        SelectionMethod::Random { seed: cfg.eval.seed },
        SelectionMethod::Fps { start: cfg.eval.fps_start },
        SelectionMethod::Learned {
            model: &model,
            scorer: ckpt.train.scorer,
            sinkhorn: ckpt.train.sinkhorn,
        },
    ];
    let prepared: Vec<Vec<PreparedSelection>> = methods
        .iter()
        .map(|m| prepare_parallel(m, &test_split, threads))
        .collect::<Result<_>>()?;

    std::fs::create_dir_all(out)?;
    for task in &cfg.eval.tasks {
        match task.as_str() {
            "classification" => {
                let net_cfg = ClassifierConfig {
                    hidden: cfg.train.model.hidden.clone(),
                    feature_dim: cfg.train.model.feature_dim,
                    num_classes,
                    epochs: cfg.eval.classifier_epochs,
                    seed: cfg.eval.seed,
                    ..ClassifierConfig::default()
                };
                let net = train_classifier(&train_split, &net_cfg)?;
                let mut curves = Vec::new();
                for (m, prep) in methods.iter().zip(&prepared) {
                    curves.push(classify_eval_prepared(&net, &test_split, prep, m.tag(), &sizes)?);
                }
                curve_report(&curves, MetricKind::Accuracy, out)?;
                print_curves("classification accuracy", &curves);
            }
            "retrieval" => {
                let net_cfg = ClassifierConfig {
                    hidden: cfg.train.model.hidden.clone(),
                    feature_dim: cfg.train.model.feature_dim,
                    num_classes,
                    epochs: cfg.eval.classifier_epochs,
                    seed: cfg.eval.seed.wrapping_add(1),
                    ..ClassifierConfig::default()
                };
                let net = train_classifier(&train_split, &net_cfg)?;
                let mut curves = Vec::new();
                let mut skipped_total = 0;
                for (m, prep) in methods.iter().zip(&prepared) {
                    let (curve, skipped) =
                        retrieval_map_eval_prepared(&net, &test_split, prep, m.tag(), &sizes)?;
                    skipped_total += skipped;
                    curves.push(curve);
                }
                if skipped_total > 0 {
                    eprintln!("warning: {skipped_total} retrieval queries skipped (single-instance classes)");
                }
                curve_report(&curves, MetricKind::Map, out)?;
                print_curves("retrieval mAP", &curves);
            }
            "reconstruction" => {
                let net_cfg = AutoencoderConfig {
                    hidden: cfg.train.model.hidden.clone(),
                    feature_dim: cfg.train.model.feature_dim,
                    decoder_points: cfg.eval.decoder_points,
                    epochs: cfg.eval.autoencoder_epochs,
                    seed: cfg.eval.seed.wrapping_add(2),
                    ..AutoencoderConfig::default()
                };
                let net = train_autoencoder(&train_split, &net_cfg)?;
                let mut curves = Vec::new();
                for (m, prep) in methods.iter().zip(&prepared) {
                    curves.push(reconstruct_eval_prepared(&net, &test_split, prep, m.tag(), &sizes)?);
                }
                curve_report(&curves, MetricKind::Chamfer, out)?;
                print_curves("reconstruction error", &curves);
            }
            other => return Err(usage_err(format!("eval.tasks: unknown task {other:?}"))),
        }
    }
    println!("reports written to {}", out.display());
    Ok(())
}

fn validated_sizes(sizes: &[usize], data: &LabeledDataset) -> Result<Vec<usize>> {
    if sizes.is_empty() {
        return Err(usage_err("eval.sizes must not be empty"));
    }
    let n = data.clouds[0].len();
    for &s in sizes {
        if s == 0 || s > n {
            return Err(usage_err(format!(
                "eval.sizes: size {s} invalid for clouds of {n} points"
            )));
        }
    }
    Ok(sizes.to_vec())
}

fn print_curves(title: &str, curves: &[MetricCurve]) {
    println!("{title}:");
    for c in curves {
        let values: Vec<String> = c
            .points
            .iter()
            .map(|&(n, v)| format!("{n}:{v:.4}"))
            .collect();
        println!("  {:<8} {}", c.method, values.join("  "));
    }
}

pub fn bench(cfg: &RunConfig, out: &Path) -> Result<()> {
    let mut rows = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.eval.seed);
    let model = Model::init(cfg.train.model.clone(), &mut master_rng(cfg.train.seed));

    for &n in &cfg.bench.sizes {
        let repeats = cfg.bench.repeats.max(1);

        let mut sinkhorn_ms = 0.0;
        for _ in 0..repeats {
            let scores: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
            let t0 = Instant::now();
            let cost = build_cost(&scores)?;
            let plan = sinkhorn(&cost, &cfg.train.sinkhorn)?;
            sinkhorn_ms += t0.elapsed().as_secs_f64() * 1e3;
            std::hint::black_box(plan.gamma);
        }

        let mut scoring_ms = 0.0;
        for _ in 0..repeats {
            let cloud = Tensor2::from_fn(n, 3, |_, _| rng.gen_range(-1.0..1.0));
            let t0 = Instant::now();
            let features = encode_value(&model.scorer_encoder, &cloud)?;
            let gmax = features.col_max().0;
            let scores = score_soft(&features, &gmax, cfg.train.scorer.tau)?;
            scoring_ms += t0.elapsed().as_secs_f64() * 1e3;
            std::hint::black_box(scores);
        }

        rows.push(("sinkhorn", n, sinkhorn_ms / repeats as f64));
        rows.push(("scoring", n, scoring_ms / repeats as f64));
    }

    std::fs::create_dir_all(out)?;
    let mut csv = String::from("op,n,millis\n");
    for (op, n, ms) in &rows {
        csv.push_str(&format!("{op},{n},{ms:.3}\n"));
        println!("{op:<9} n={n:<5} {ms:>10.3} ms");
    }
    let path = out.join("bench.csv");
    std::fs::write(&path, csv)?;
    println!("timings written to {}", path.display());
    Ok(())
}

/// Paths a subcommand needs, resolved against the output directory.
pub fn default_data_dir(out: &Path) -> PathBuf {
    out.join("dataset")
}
