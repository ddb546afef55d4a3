//! Acceptance criteria. Runs with `harness = false` so every criterion prints
//! a PASS/FAIL line even when the suite succeeds.

// `ensure!(a <= b)` negates the comparison on purpose: NaN must fail.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::process::ExitCode;
use std::time::Instant;

use rand::rngs::StdRng;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use sparsekit::dataset::Dataset;
use sparsekit::fixtures::{lenet_paths, separable};
use sparsekit::sparsify::{triangular_thresholds, SparsityReport};
use sparsekit::sweep::{parse_grid, Evaluator};
use sparsekit::{
    apply_plan, compression_factor, evaluate, finetune_layers, plan_flat, plan_relative,
    plan_triangular, read_dataset, read_model, sparsity_report, sweep, write_model, ArchManifest,
    FinetuneConfig, LayerKind, LayerTensor, MethodParams, Model, RelativeMode, SparsifyPlan,
    SweepMethod, TriangularMode,
};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);
type PlanFn<'a> = Box<dyn Fn(f64) -> SparsifyPlan + 'a>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn random_layer(rng: &mut StdRng, name: &str, n: usize) -> LayerTensor {
    let data: Vec<f32> = (0..n)
        .map(|_| match rng.gen_range(0..20) {
            0 => 0.0,
            1 => -0.0,
            _ => rng.gen_range(-2.0f32..2.0),
        })
        .collect();
    LayerTensor::new(name, LayerKind::FullyConnected, vec![1, n as u32], data).unwrap()
}

fn random_model(rng: &mut StdRng, layers: usize) -> Model {
    let layers = (0..layers)
        .map(|i| {
            let n = rng.gen_range(1..64);
            random_layer(rng, &format!("l{i}"), n)
        })
        .collect();
    Model::new(layers).unwrap()
}

fn zero_mask(m: &Model) -> Vec<bool> {
    m.layers
        .iter()
        .flat_map(|l| l.data.iter().map(|&v| v == 0.0))
        .collect()
}

fn brute_zero_count(l: &LayerTensor) -> usize {
    l.data
        .iter()
        .filter(|v| v.to_bits() == 0 || v.to_bits() == 0x8000_0000)
        .count()
}

fn criterion_1() -> Outcome {
    let pairs = [
        (0.51, 2.04),
        (0.50, 2.00),
        (0.62, 2.63),
        (0.70, 3.33),
        (0.73, 3.70),
    ];
    for (s, want) in pairs {
        let got = compression_factor(s).map_err(|e| e.to_string())?;
        ensure!(
            (got - want).abs() <= 0.01,
            "s_m={s}: got {got}, want {want}"
        );
    }
    Ok(format!("{} pairs within 0.01", pairs.len()))
}

fn criterion_2() -> Outcome {
    let table: [(&str, u64, f64); 8] = [
        ("Conv1", 23_000, 0.10),
        ("Conv2", 307_000, 0.35),
        ("Conv3", 663_000, 0.35),
        ("Conv4", 1_300_000, 0.35),
        ("Conv5", 884_000, 0.35),
        ("FC1", 26_000_000, 0.85),
        ("FC2", 16_000_000, 0.85),
        ("FC3", 4_000_000, 0.73),
    ];
    let report = SparsityReport::from_counts(
        table
            .iter()
            .map(|&(name, n, pct)| (name, n, (n as f64 * pct).round() as u64)),
    )
    .map_err(|e| e.to_string())?;
    let s_m = report.model_sparsity;
    ensure!(
        (s_m - 0.811).abs() <= 0.005,
        "s_m = {s_m}, want 0.811 +- 0.005"
    );
    Ok(format!("s_m = {:.4} (target 0.811 +- 0.005)", s_m))
}

fn criterion_3() -> Outcome {
    let mut rng = StdRng::seed_from_u64(3);
    let mut boundary_hits = 0usize;
    for trial in 0..2000 {
        let n = rng.gen_range(1..48);
        let layer = random_layer(&mut rng, "l", n);
        let tau: f64 = match trial % 4 {
            0 => f64::from(layer.data[rng.gen_range(0..n)].abs()),
            1 => -1.0,
            2 => 0.0,
            _ => rng.gen_range(0.0..2.5),
        };
        let model = Model::new(vec![layer.clone()]).unwrap();
        let plan = SparsifyPlan {
            params: MethodParams::Flat { delta: 0.0 },
            thresholds: vec![tau],
        };
        let out = apply_plan(&model, &plan).map_err(|e| e.to_string())?;
        for (i, (&w, &got)) in layer.data.iter().zip(&out.layers[0].data).enumerate() {
            let mag = f64::from(w.abs());
            let want = if mag <= tau { 0.0f32 } else { w };
            if mag == tau {
                boundary_hits += 1;
            }
            ensure!(
                got.to_bits() == want.to_bits(),
                "trial {trial} idx {i}: w={w:e} tau={tau:e} got {got:e} want {want:e}"
            );
        }
    }
    ensure!(boundary_hits > 0, "no boundary cases exercised");
    Ok(format!(
        "2000 layers bit-exact, {boundary_hits} boundary hits"
    ))
}

fn criterion_4() -> Outcome {
    let mut rng = StdRng::seed_from_u64(4);
    let mut checked = 0;
    for _ in 0..300 {
        let n = rng.gen_range(1..200usize);
        // distinct magnitudes: a shuffled permutation of 1..=n with random signs
        let mut mags: Vec<u32> = (1..=n as u32).collect();
        mags.shuffle(&mut rng);
        let data: Vec<f32> = mags
            .iter()
            .map(|&m| {
                if rng.gen_bool(0.5) {
                    m as f32 * 0.01
                } else {
                    -(m as f32) * 0.01
                }
            })
            .collect();
        let distinct = Model::new(vec![LayerTensor::new(
            "d",
            LayerKind::FullyConnected,
            vec![1, n as u32],
            data,
        )
        .unwrap()])
        .unwrap();
        // ties: magnitudes drawn from a small set
        let tied_data: Vec<f32> = (0..n)
            .map(|_| rng.gen_range(0..4) as f32 * if rng.gen_bool(0.5) { 0.5 } else { -0.5 })
            .collect();
        let tied = Model::new(vec![LayerTensor::new(
            "t",
            LayerKind::FullyConnected,
            vec![1, n as u32],
            tied_data,
        )
        .unwrap()])
        .unwrap();

        for tenth in 0..=10usize {
            let delta = tenth as f64 / 10.0;
            let k = tenth * n / 10;
            let out = apply_plan(
                &distinct,
                &plan_relative(&distinct, delta, RelativeMode::Percentile).unwrap(),
            )
            .unwrap();
            let zeros = brute_zero_count(&out.layers[0]);
            ensure!(
                zeros == k,
                "distinct n={n} delta={delta}: {zeros} zeros, want {k}"
            );

            let out = apply_plan(
                &tied,
                &plan_relative(&tied, delta, RelativeMode::Percentile).unwrap(),
            )
            .unwrap();
            let zeros = brute_zero_count(&out.layers[0]);
            ensure!(zeros >= k, "tied n={n} delta={delta}: {zeros} zeros < {k}");
            checked += 2;
        }
    }
    Ok(format!("{checked} layer/delta combinations calibrated"))
}

fn criterion_5() -> Outcome {
    let mut rng = StdRng::seed_from_u64(5);
    let grid: Vec<f64> = (0..=10).map(|i| i as f64 / 10.0).collect();
    let mut checked = 0;
    for trial in 0..150 {
        let layers = rng.gen_range(2..5);
        let mut model = random_model(&mut rng, layers);
        // the literal triangular ramp needs span(last) >= span(first)
        let last = model.layers.len() - 1;
        let n = rng.gen_range(2..64);
        let mut wide = random_layer(&mut rng, &format!("l{last}"), n);
        wide.data[0] = 8.0;
        wide.data[1] = -8.0;
        model.layers[last] = wide;

        let methods: Vec<(&str, PlanFn)> = vec![
            ("flat", Box::new(|d| plan_flat(&model, d).unwrap())),
            (
                "triangular/literal",
                Box::new(|d| plan_triangular(&model, d, d, TriangularMode::Literal).unwrap()),
            ),
            (
                "triangular/interpolated",
                Box::new(|d| plan_triangular(&model, d, d, TriangularMode::Interpolated).unwrap()),
            ),
            (
                "relative/percentile",
                Box::new(|d| plan_relative(&model, d, RelativeMode::Percentile).unwrap()),
            ),
            (
                "relative/span",
                Box::new(|d| plan_relative(&model, d, RelativeMode::Span).unwrap()),
            ),
        ];
        for (name, make) in &methods {
            let mut prev: Option<Vec<bool>> = None;
            for &d in &grid {
                let plan = make(d);
                let once = apply_plan(&model, &plan).unwrap();
                let twice = apply_plan(&once, &plan).unwrap();
                ensure!(
                    once == twice
                        && once.layers.iter().zip(&twice.layers).all(|(a, b)| a
                            .data
                            .iter()
                            .zip(&b.data)
                            .all(|(x, y)| x.to_bits() == y.to_bits())),
                    "trial {trial} {name} delta={d}: not idempotent"
                );
                let mask = zero_mask(&once);
                if let Some(p) = &prev {
                    ensure!(
                        p.iter().zip(&mask).all(|(&a, &b)| !a || b),
                        "trial {trial} {name} delta={d}: zero set shrank"
                    );
                }
                prev = Some(mask);
                checked += 1;
            }
        }
    }
    Ok(format!(
        "{checked} (model, method, delta) cases monotone and idempotent"
    ))
}

fn criterion_6() -> Outcome {
    let lit =
        triangular_thresholds(5, 0.1, 0.5, TriangularMode::Literal).map_err(|e| e.to_string())?;
    let interp = triangular_thresholds(5, 0.1, 0.5, TriangularMode::Interpolated)
        .map_err(|e| e.to_string())?;
    for (got, want) in lit[1..4].iter().zip([0.0, 0.08, 0.16]) {
        ensure!((got - want).abs() <= 1e-9, "literal interior {lit:?}");
    }
    for (got, want) in interp[1..4].iter().zip([0.2, 0.3, 0.4]) {
        ensure!(
            (got - want).abs() <= 1e-9,
            "interpolated interior {interp:?}"
        );
    }
    ensure!(lit[0] == 0.1 && lit[4] == 0.5, "endpoints {lit:?}");
    Ok(format!(
        "literal {:?}, interpolated {:?}",
        &lit[1..4],
        &interp[1..4]
    ))
}

fn criterion_7() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut rng = StdRng::seed_from_u64(7);
    for trial in 0..200 {
        let n_layers = rng.gen_range(1..5);
        let layers = (0..n_layers)
            .map(|i| {
                let conv = rng.gen_bool(0.5);
                let shape: Vec<u32> = if conv {
                    (0..4).map(|_| rng.gen_range(1..4)).collect()
                } else {
                    (0..2).map(|_| rng.gen_range(1..9)).collect()
                };
                let n: u32 = shape.iter().product();
                let data = (0..n)
                    .map(|_| {
                        f32::from_bits(
                            rng.gen::<u32>() & 0x807F_FFFF | (rng.gen_range(1..254u32) << 23),
                        )
                    })
                    .collect();
                let kind = if conv {
                    LayerKind::Conv
                } else {
                    LayerKind::FullyConnected
                };
                LayerTensor::new(format!("layer_{i}_é"), kind, shape, data).unwrap()
            })
            .collect();
        let model = Model::new(layers).unwrap();
        let path = dir.path().join(format!("m{trial}.spwt"));
        write_model(&model, &path).map_err(|e| e.to_string())?;
        let back = read_model(&path).map_err(|e| e.to_string())?;
        ensure!(
            back.num_layers() == model.num_layers(),
            "trial {trial}: layer count"
        );
        for (a, b) in model.layers.iter().zip(&back.layers) {
            ensure!(
                a.name == b.name && a.kind == b.kind && a.shape == b.shape,
                "trial {trial}: metadata differs"
            );
            ensure!(
                a.data
                    .iter()
                    .zip(&b.data)
                    .all(|(x, y)| x.to_bits() == y.to_bits()),
                "trial {trial}: data bits differ"
            );
        }
        let bytes = std::fs::read(&path).unwrap();
        ensure!(
            back.to_bytes().unwrap() == bytes,
            "trial {trial}: re-serialized bytes differ"
        );

        let samples = rng.gen_range(1..20);
        let dims = vec![rng.gen_range(1..4u32), rng.gen_range(1..5u32)];
        let len = (dims[0] * dims[1]) as usize;
        let classes = rng.gen_range(1..10u32);
        let ds = Dataset::new(
            dims,
            classes,
            (0..samples)
                .map(|_| (0..len).map(|_| rng.gen_range(-5.0f32..5.0)).collect())
                .collect(),
            (0..samples)
                .map(|_| rng.gen_range(0..classes) as u16)
                .collect(),
        )
        .unwrap();
        let dpath = dir.path().join(format!("d{trial}.spds"));
        sparsekit::write_dataset(&ds, &dpath).map_err(|e| e.to_string())?;
        let dback = read_dataset(&dpath).map_err(|e| e.to_string())?;
        ensure!(
            dback.to_bytes().unwrap() == std::fs::read(&dpath).unwrap() && dback == ds,
            "trial {trial}: dataset round trip differs"
        );
    }
    Ok("200 SPWT + 200 SPDS files round-tripped bit-exactly".into())
}

fn end_to_end(name: &str, model: &Model, manifest: &ArchManifest, data: &Dataset) -> Outcome {
    let total = model.weight_count();
    let pre_zeros: usize = model.layers.iter().map(brute_zero_count).sum();
    let class0 = data.labels.iter().filter(|&&l| l == 0).count() as f64 / data.labels.len() as f64;
    let eval = Evaluator::new(model, manifest, data).map_err(|e| e.to_string())?;

    for plan in [
        plan_flat(model, 0.0).unwrap(),
        plan_relative(model, 0.0, RelativeMode::Percentile).unwrap(),
    ] {
        let e = eval.evaluate_plan(&plan).map_err(|e| e.to_string())?;
        ensure!(
            e.normalized_accuracy == 1.0,
            "{name} {}: delta 0 normalized accuracy {}",
            plan.method(),
            e.normalized_accuracy
        );
        ensure!(
            e.model_sparsity == pre_zeros as f64 / total as f64,
            "{name}: delta 0 s_m {} != pre-existing zero fraction",
            e.model_sparsity
        );
    }
    let full = plan_relative(model, 1.0, RelativeMode::Percentile).unwrap();
    let sparse = apply_plan(model, &full).unwrap();
    let s_m = sparsity_report(&sparse).unwrap().model_sparsity;
    ensure!(s_m == 1.0, "{name}: relative delta 1 s_m = {s_m}");
    let acc = evaluate(&sparse, manifest, data).map_err(|e| e.to_string())?;
    ensure!(
        acc == class0,
        "{name}: all-zero accuracy {acc} != class-0 frequency {class0}"
    );
    Ok(format!(
        "{name}: all-zero accuracy {acc:.4} = class-0 frequency"
    ))
}

fn criterion_8() -> Outcome {
    let (model, manifest, data) = separable();
    let a = end_to_end("separable", &model, &manifest, &data)?;
    let (m, a_path, d) = lenet_paths();
    let model = read_model(m).map_err(|e| e.to_string())?;
    let manifest = ArchManifest::read(a_path).map_err(|e| e.to_string())?;
    let data = read_dataset(d).map_err(|e| e.to_string())?;
    let b = end_to_end("lenet", &model, &manifest, &data)?;
    Ok(format!("{a}; {b}"))
}

fn criterion_9() -> Outcome {
    let gate = 0.95;
    let (m, a_path, d) = lenet_paths();
    let model = read_model(m).map_err(|e| e.to_string())?;
    let manifest = ArchManifest::read(a_path).map_err(|e| e.to_string())?;
    let data = read_dataset(d).map_err(|e| e.to_string())?;

    let grid = parse_grid("0:1:0.05").unwrap();
    let curve = sweep(
        &model,
        &manifest,
        &data,
        &SweepMethod::Relative {
            mode: RelativeMode::Percentile,
        },
        &grid,
        gate,
    )
    .map_err(|e| e.to_string())?;
    let best = curve.best_point().ok_or("no sweep point meets the gate")?;

    let config = FinetuneConfig {
        base_delta: best.delta,
        step: 0.05,
        gate,
        cap: 0.95,
    };
    let tuned = finetune_layers(&model, &manifest, &data, &config).map_err(|e| e.to_string())?;
    ensure!(
        tuned.model_sparsity >= best.model_sparsity,
        "fine-tuned s_m {} < sweep best {}",
        tuned.model_sparsity,
        best.model_sparsity
    );

    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = dir.path().join("tuned.spwt");
    write_model(&apply_plan(&model, &tuned.plan).unwrap(), &path).map_err(|e| e.to_string())?;
    let reloaded = read_model(&path).map_err(|e| e.to_string())?;
    let base_acc = evaluate(&model, &manifest, &data).map_err(|e| e.to_string())?;
    let acc = evaluate(&reloaded, &manifest, &data).map_err(|e| e.to_string())?;
    let norm = acc / base_acc;
    ensure!(
        norm >= gate,
        "reloaded model normalized accuracy {norm} < {gate}"
    );
    ensure!(
        sparsity_report(&reloaded).unwrap().model_sparsity == tuned.model_sparsity,
        "reloaded sparsity differs"
    );
    Ok(format!(
        "sweep best delta={} s_m={:.4}; fine-tuned s_m={:.4} (gain {:+.1} pts), reloaded normalized accuracy {:.4}",
        best.delta,
        best.model_sparsity,
        tuned.model_sparsity,
        100.0 * (tuned.model_sparsity - best.model_sparsity),
        norm
    ))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 9] = [
        ("1 compression-factor arithmetic", criterion_1),
        ("2 fine-tuning table aggregation", criterion_2),
        ("3 thresholding oracle equivalence", criterion_3),
        ("4 relative-percentile calibration", criterion_4),
        ("5 monotonicity and idempotence", criterion_5),
        ("6 triangular interior thresholds", criterion_6),
        ("7 SPWT/SPDS round trip", criterion_7),
        ("8 end-to-end fixture workflow", criterion_8),
        ("9 fine-tune dominance", criterion_9),
    ];
    let mut failed = 0;
    for (name, run) in criteria {
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(run).unwrap_or_else(|_| Err("panicked".to_string()));
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS  criterion {name} ({secs:.2}s): {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL  criterion {name} ({secs:.2}s): {detail}");
            }
        }
    }
    if failed == 0 {
        println!("acceptance: all {} criteria passed", criteria.len());
        ExitCode::SUCCESS
    } else {
        println!("acceptance: {failed} of {} criteria failed", criteria.len());
        ExitCode::FAILURE
    }
}
