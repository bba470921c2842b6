use std::path::Path;
use std::time::Instant;

use kronmark::checkpoint;
use kronmark::dataset::{self, image_path, load_dataset, read_index, save_dataset, IndexRecord, INDEX_FILE};
use kronmark::image::Image;
use kronmark::landmarks::LandmarkSet;
use kronmark::metrics::{self, OksConfig, RegressionReport};
use kronmark::morphometrics::{distance_labels, distance_matrix, extract_traits, pca as fit_pca, NUM_DISTANCES};
use kronmark::net::{decode_refined, KpfemConfig, LandmarkNet, REFINE_RADIUS};
use kronmark::synth::{default_heatmap_targets, generate_dataset, GeneratorConfig, SpecimenRecord};
use kronmark::train::{self as training, evaluate_landmarks, image_input, predict_landmarks, TrainConfig};
use kronmark::weight::{compare_methods, pca_ablation, RegressorHyper, WeightSplit};
use serde_json::json;

use crate::report::{num, CmdResult, Failure, Run};
use crate::{BenchArgs, EvalArgs, GenArgs, Layout, PcaArgs, SplitName, TrainArgs, WeightArgs, WeightMode};

const SPLIT: (f64, f64, f64) = (0.4, 0.2, 0.4);
const MODEL_FILE: &str = "model.kmck";
const MODEL_CONFIG_FILE: &str = "model.json";
const TRAIT_COLUMNS: [&str; 5] = ["Total length", "Body length", "First ASH", "Third ASH", "Last ASH"];

fn to_json<T: serde::Serialize>(v: &T) -> serde_json::Value {
    serde_json::to_value(v).expect("configs serialize")
}

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

pub fn gen(a: &GenArgs) -> CmdResult {
    let cfg = GeneratorConfig {
        length_mm: (a.length_min, a.length_max),
        noise_std: a.noise,
        mm_per_px: a.mm_per_px,
        ..GeneratorConfig::default()
    };
    cfg.validate()?;
    let seed = a.seed.seed;
    let mut run = Run::start("gen", &a.out)?;
    let records = generate_dataset(seed, a.count as usize, &cfg)?;
    save_dataset(&records, &a.out)?;
    run.track(INDEX_FILE);
    for r in &records {
        run.track(image_path(r.id));
    }
    let mut header = vec!["id".to_string(), "weight_g".into(), "mm_per_px".into()];
    header.extend(TRAIT_COLUMNS.iter().map(|c| format!("{c} (mm)")));
    let rows = records
        .iter()
        .map(|r| {
            let t = extract_traits(&r.landmarks, r.mm_per_px)?;
            let mut row = vec![r.id.to_string(), num(r.weight), num(r.mm_per_px)];
            row.extend(t.to_array().map(num));
            Ok(row)
        })
        .collect::<CmdResult<Vec<_>>>()?;
    run.csv("specimens.csv", &header, &rows)?;
    run.finish(json!({ "count": a.count, "generator": to_json(&cfg) }), Some(seed))
}

fn model_config(layout: Layout, order: usize) -> CmdResult<KpfemConfig> {
    let base = match layout {
        Layout::Default => KpfemConfig::default(),
        Layout::Full => KpfemConfig::full_resolution(),
    };
    let cfg = base.with_order(order);
    cfg.validate()?;
    Ok(cfg)
}

fn split_records<T: Clone>(records: &[T], which: SplitName, seed: u64) -> CmdResult<Vec<T>> {
    if which == SplitName::All {
        return Ok(records.to_vec());
    }
    let (train, val, test) = dataset::split(records, SPLIT, seed)?;
    Ok(match which {
        SplitName::Train => train,
        SplitName::Val => val,
        _ => test,
    })
}

pub fn train(a: &TrainArgs) -> CmdResult {
    if !(a.lr > 0.0) {
        return Err(usage(format!("--lr must be positive, got {}", a.lr)));
    }
    let model = model_config(a.layout, a.order)?;
    let seed = a.seed.seed;
    let mut cfg = TrainConfig {
        learning_rate: a.lr,
        epochs: a.epochs as usize,
        batch_size: a.batch as usize,
        seed,
        ..TrainConfig::default()
    };
    if a.literal_decay {
        cfg = cfg.literal_decay();
    }
    if a.no_augment {
        cfg.augmentation = None;
    }
    let records = load_dataset(&a.data)?;
    let (train_set, val_set, _) = dataset::split(&records, SPLIT, seed)?;
    log::info!("training on {} records, validating on {}", train_set.len(), val_set.len());
    let outcome = training::train(&train_set, &val_set, &model, &cfg)?;

    let mut run = Run::start("train", &a.out)?;
    outcome.net.save(&run.path(MODEL_FILE))?;
    run.track(MODEL_FILE);
    run.write(MODEL_CONFIG_FILE, (serde_json::to_string_pretty(&model).expect("config serializes") + "\n").as_bytes())?;
    let rows: Vec<Vec<String>> = outcome
        .history
        .iter()
        .map(|h| {
            vec![
                h.epoch.to_string(),
                num(h.train.coords),
                num(h.train.heatmap),
                num(h.train.total()),
                h.val.map_or(String::new(), |v| num(v.total())),
            ]
        })
        .collect();
    run.csv("loss_history.csv", &["epoch", "train_coords", "train_heatmap", "train_avg", "val_avg"], &rows)?;
    let config = json!({
        "data": a.data,
        "model": to_json(&model),
        "train": to_json(&cfg),
        "best_epoch": outcome.best_epoch,
    });
    run.finish(config, Some(seed))
}

fn read_model_config(path: &Path) -> CmdResult<KpfemConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure::Io(format!("{}: {e}", path.display())))?;
    let cfg: KpfemConfig =
        serde_json::from_str(&text).map_err(|e| Failure::Io(format!("{}: {e}", path.display())))?;
    cfg.validate()?;
    Ok(cfg)
}

fn traits_of(lm: &LandmarkSet, mm_per_px: f64) -> CmdResult<[f64; 5]> {
    Ok(extract_traits(lm, mm_per_px)?.to_array())
}

pub fn eval(a: &EvalArgs) -> CmdResult {
    let seed = a.seed.seed;
    let (pred, records, source) = if a.oracle {
        let index = split_records(&read_index(&a.data)?, a.split, seed)?;
        let pred = index
            .iter()
            .map(|r| {
                let h = default_heatmap_targets(&r.landmarks, TrainConfig::default().heatmap_sigma)?;
                let size = kronmark::landmarks::IMAGE_SIZE as f64;
                Ok(decode_refined(&h, size, size, REFINE_RADIUS))
            })
            .collect::<CmdResult<Vec<_>>>()?;
        (pred, index, json!("oracle"))
    } else {
        let ckpt = a.checkpoint.as_deref().expect("clap requires a checkpoint without --oracle");
        let model = match &a.model {
            Some(p) => read_model_config(p)?,
            None => {
                let beside = ckpt.with_file_name(MODEL_CONFIG_FILE);
                if beside.exists() {
                    read_model_config(&beside)?
                } else {
                    KpfemConfig::default()
                }
            }
        };
        let net = LandmarkNet::<f32>::load(ckpt, &model)?;
        let records = split_records(&load_dataset(&a.data)?, a.split, seed)?;
        let images: Vec<&Image> = records.iter().map(|r| &r.image).collect();
        let pred = predict_landmarks(&net, &images)?;
        let index: Vec<IndexRecord> = records
            .iter()
            .map(|r| IndexRecord {
                id: r.id,
                image: image_path(r.id).into(),
                landmarks: r.landmarks,
                weight: r.weight,
                mm_per_px: r.mm_per_px,
            })
            .collect();
        (pred, index, json!({ "checkpoint": ckpt, "model": to_json(&model) }))
    };
    if records.is_empty() {
        return Err(usage("the selected split is empty"));
    }
    let gt: Vec<LandmarkSet> = records.iter().map(|r| r.landmarks).collect();
    let oks_cfg = OksConfig::default();
    let report = evaluate_landmarks(&pred, &gt, &oks_cfg)?;

    let mut run = Run::start("eval", &a.out)?;
    let ap = [report.ap, report.ap50, report.ap75, report.ar, report.ar50, report.ar75];
    run.csv("eval_report.csv", &["AP", "AP50", "AP75", "AR", "AR50", "AR75"], &[ap.map(num).to_vec()])?;
    let per_image: Vec<Vec<String>> =
        records.iter().zip(&report.oks).map(|(r, o)| vec![r.id.to_string(), num(*o)]).collect();
    run.csv("oks_per_image.csv", &["id", "oks"], &per_image)?;

    let mut manual: [Vec<f64>; 5] = Default::default();
    let mut measured: [Vec<f64>; 5] = Default::default();
    for (r, p) in records.iter().zip(&pred) {
        let (m, d) = (traits_of(&r.landmarks, r.mm_per_px)?, traits_of(p, r.mm_per_px)?);
        for k in 0..5 {
            manual[k].push(m[k]);
            measured[k].push(d[k]);
        }
    }
    let mads = (0..5).map(|k| metrics::mad(&manual[k], &measured[k]).map(num)).collect::<Result<Vec<_>, _>>()?;
    run.csv("trait_mad.csv", &TRAIT_COLUMNS, &[mads])?;
    log::info!("mean OKS {:.4}, AP {:.4}, AP50 {:.4}", report.mean_oks(), report.ap, report.ap50);
    run.finish(json!({ "data": a.data, "split": format!("{:?}", a.split).to_lowercase(), "source": source, "oks": to_json(&oks_cfg) }), Some(seed))
}

fn distance_rows(index: &[IndexRecord]) -> Vec<f64> {
    index.iter().flat_map(|r| distance_matrix(&r.landmarks).0.map(|d| d * r.mm_per_px)).collect()
}

fn regression_row(name: &str, r: &kronmark::Result<RegressionReport>) -> Vec<String> {
    match r {
        Ok(r) => vec![name.to_string(), num(r.mae), num(r.mse), num(r.r2)],
        Err(e) => {
            log::warn!("{name}: {e}");
            vec![name.to_string(), "NA".into(), "NA".into(), "NA".into()]
        }
    }
}

pub fn weight(a: &WeightArgs) -> CmdResult {
    let seed = a.seed.seed;
    let hyper = RegressorHyper { epochs: a.epochs as usize, seed, ..RegressorHyper::default() };
    let header = ["Method", "MAE (g)", "MSE (g)", "R2"];
    let mut run = Run::start("weight", &a.out)?;
    let mode;
    match a.mode {
        WeightMode::Compare => {
            mode = "compare";
            if !(0.0..=1.0).contains(&a.threshold) {
                return Err(usage(format!("--threshold must be in [0, 1], got {}", a.threshold)));
            }
            let records: Vec<SpecimenRecord> = load_dataset(&a.data)?;
            let rows = compare_methods(&records, &hyper, a.threshold)?;
            let table: Vec<Vec<String>> = rows.iter().map(|r| regression_row(r.method, &r.result)).collect();
            run.csv("weight_compare.csv", &header, &table)?;
        }
        WeightMode::Ablation => {
            mode = "ablation";
            if let Some(c) = a.components.iter().find(|&&c| c == 0 || c > NUM_DISTANCES) {
                return Err(usage(format!("component count {c} must be in 1..={NUM_DISTANCES}")));
            }
            let index = read_index(&a.data)?;
            let targets: Vec<f64> = index.iter().map(|r| r.weight).collect();
            let split = WeightSplit::new(&distance_rows(&index), &targets, NUM_DISTANCES, seed)?;
            let rows = pca_ablation(&split, &a.components, &hyper)?;
            let table: Vec<Vec<String>> = rows
                .iter()
                .map(|r| {
                    let name = r.components.map_or("No PCA".to_string(), |n| format!("PCA (n={n})"));
                    regression_row(&name, &Ok(r.report.clone()))
                })
                .collect();
            run.csv("weight_ablation.csv", &header, &table)?;
        }
    }
    let config = json!({
        "data": a.data,
        "mode": mode,
        "hyper": to_json(&hyper),
        "threshold": a.threshold,
        "components": a.components,
    });
    run.finish(config, Some(seed))
}

pub fn pca(a: &PcaArgs) -> CmdResult {
    let index = read_index(&a.data)?;
    if index.len() < 2 {
        return Err(usage(format!("PCA needs at least 2 specimens, found {}", index.len())));
    }
    let max = NUM_DISTANCES.min(index.len() - 1);
    if a.components == 0 || a.components > max {
        return Err(usage(format!("--components must be in 1..={max} for {} specimens", index.len())));
    }
    let data = distance_rows(&index);
    let p = fit_pca(&data, NUM_DISTANCES, a.components)?;
    let k = p.n_components;
    let pcs: Vec<String> = (1..=k).map(|c| format!("PC{c}")).collect();
    let mut run = Run::start("pca", &a.out)?;

    let labels = distance_labels();
    let mut header = vec!["id".to_string()];
    header.extend(labels.iter().cloned());
    let rows: Vec<Vec<String>> = index
        .iter()
        .zip(data.chunks(NUM_DISTANCES))
        .map(|(r, d)| std::iter::once(r.id.to_string()).chain(d.iter().map(|&v| num(v))).collect())
        .collect();
    run.csv("distances.csv", &header, &rows)?;

    let mut header = vec![String::new()];
    header.extend(pcs.iter().cloned());
    let stat = |name: &str, v: &[f64]| -> Vec<String> { std::iter::once(name.to_string()).chain(v.iter().map(|&x| num(x))).collect() };
    let table = vec![
        stat("Standard deviation", &p.std_dev),
        stat("Proportion of Variance", &p.proportion),
        stat("Cumulative Proportion", &p.cumulative),
    ];
    run.csv("pca_variance.csv", &header, &table)?;

    let mut header = vec!["id".to_string()];
    header.extend(pcs.iter().cloned());
    let rows: Vec<Vec<String>> = index
        .iter()
        .zip(p.scores.chunks(k))
        .map(|(r, s)| std::iter::once(r.id.to_string()).chain(s.iter().map(|&v| num(v))).collect())
        .collect();
    run.csv("pca_scores.csv", &header, &rows)?;

    let mut header = vec!["distance".to_string()];
    header.extend(pcs.iter().cloned());
    let rows: Vec<Vec<String>> = labels
        .iter()
        .enumerate()
        .map(|(f, l)| std::iter::once(l.clone()).chain((0..k).map(|c| num(p.loading(f, c)))).collect())
        .collect();
    run.csv("pca_loadings.csv", &header, &rows)?;

    if k >= 2 {
        let pts: Vec<(f64, f64)> = p.scores.chunks(k).map(|s| (s[0], s[1])).collect();
        let axis = |c: usize| format!("Dim{} ({:.1}%)", c + 1, 100.0 * p.proportion[c]);
        let svg = crate::svg::scatter(&pts, &axis(0), &axis(1), "Specimen scores on the first two components");
        run.write("pca_scatter.svg", svg.as_bytes())?;
    }
    log::info!("PC1 explains {:.3} of the variance", p.proportion[0]);
    run.finish(json!({ "data": a.data, "components": k, "features": "inter-landmark distances (mm)" }), None)
}

fn bench_model(spec: &str, input_size: usize) -> CmdResult<KpfemConfig> {
    let mut cfg = match spec {
        "default" => KpfemConfig::default(),
        "full" => KpfemConfig::full_resolution(),
        path => read_model_config(Path::new(path))?,
    };
    cfg.input_size = input_size;
    cfg.validate()?;
    Ok(cfg)
}

fn throughput(cfg: &KpfemConfig, warmup: u64, passes: u64, seed: u64) -> CmdResult<f64> {
    let net = LandmarkNet::<f32>::init(cfg, seed)?;
    let size = cfg.input_size;
    let img = Image::filled(size, size, [0.5, 0.4, 0.3]);
    let x = image_input::<f32>(&img);
    for _ in 0..warmup {
        net.forward(&x)?;
    }
    let t = Instant::now();
    for _ in 0..passes {
        net.forward(&x)?;
    }
    Ok(passes as f64 / t.elapsed().as_secs_f64())
}

pub fn bench(a: &BenchArgs) -> CmdResult {
    let cfg = bench_model(&a.config, a.input_size)?;
    let seed = a.seed.seed;
    let order = cfg.layers[0].n;
    let mut variants = vec![(format!("KPFEM (n={order})"), cfg.clone())];
    if order != 1 {
        variants.push(("KPFEM (n=1)".to_string(), cfg.with_order(1)));
    }
    let mut run = Run::start("bench", &a.out)?;
    let mut rows = Vec::new();
    let mut layers = Vec::new();
    for (name, c) in &variants {
        let cost = c.total_cost()?;
        let net = LandmarkNet::<f32>::init(c, seed)?;
        let bytes = checkpoint::encode(&net.digest(), &net.named_tensors_f32()).len();
        let ips = throughput(c, a.warmup, a.passes, seed)?;
        log::info!("{name}: {} params, {} FLOPs, {ips:.2} img/s", cost.param_count, cost.flop_count);
        rows.push(vec![
            name.clone(),
            cost.flop_count.to_string(),
            cost.param_count.to_string(),
            format!("{:.3}", bytes as f64 / 1e6),
            format!("{ips:.2}"),
            String::new(),
            String::new(),
            String::new(),
        ]);
        for (layer, lc) in c.layer_costs()? {
            layers.push(vec![name.clone(), layer, lc.param_count.to_string(), lc.flop_count.to_string()]);
        }
    }
    run.csv(
        "bench.csv",
        &["Network", "FLOPs", "Params", "Size (MB)", "Throughput (img/sec)", "Coords", "HeatMap", "Avg"],
        &rows,
    )?;
    run.csv("bench_layers.csv", &["Network", "layer", "params", "flops"], &layers)?;
    let config = json!({ "model": to_json(&cfg), "passes": a.passes, "warmup": a.warmup });
    run.finish(config, Some(seed))
}
