//! Acceptance criteria 1-8. Each test prints one `criterion N ... PASS|FAIL` line.

mod common;

use std::path::Path;
use std::process::Command;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use rand::Rng;
use rand_distr::{Distribution, Normal};

use common::*;
use nlrd::block_matching::{compute_neighbor_table, NeighborTable};
use nlrd::denoise;
use nlrd::diffusion::{diffusion_step, DiffusionModel, Hyperparameters, StageParameters};
use nlrd::image::{add_gaussian_noise, convolve, Image, Kernel};
use nlrd::metrics::{psnr, ssim};
use nlrd::nonlocal::{apply_nonlocal, apply_nonlocal_adjoint, NonlocalWeights};
use nlrd::param::{dct_filter_bank, InfluenceWeights, LocalFilterCoeffs, RbfGrid};
use nlrd::pgm::write_image;
use nlrd::synth::synthetic_scene;
use nlrd::training::backprop::loss_prepared;
use nlrd::training::gradcheck::{block_of_each, BLOCKS};
use nlrd::training::{
    initialize_model, loss_and_gradient_prepared, make_dataset, perturb_model, prepare_samples,
    relative_error, save_model, train, train_from, InitMode, InitOptions, LbfgsConfig, LossKind,
    TrainConfig, TrainingSample,
};

fn report(n: u32, name: &str, ok: bool, detail: String) {
    println!(
        "criterion {n} ({name}): {} - {detail}",
        if ok { "PASS" } else { "FAIL" }
    );
}

fn single_thread<T: Send>(f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .unwrap()
        .install(f)
}

fn threads<T: Send>(n: usize, f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build()
        .unwrap()
        .install(f)
}

// ---------------------------------------------------------------- criterion 1

fn toy_hyper() -> Hyperparameters {
    Hyperparameters {
        filter_size: 3,
        neighbors: 3,
        filters: 3,
        rbf: RbfGrid {
            count: 7,
            min: -150.0,
            max: 150.0,
            gamma: 50.0,
        },
        patch: 3,
        window: 7,
        sigma: 25.0,
    }
}

#[test]
fn criterion_1_gradient_exactness() {
    let start = Instant::now();
    let base = initialize_model(toy_hyper(), 2, &InitOptions::default()).unwrap();
    let mut worst: Vec<(&str, f64)> = BLOCKS.iter().map(|b| (*b, 0.0)).collect();
    for (seed, kind) in [
        (1, LossKind::Quadratic),
        (2, LossKind::Quadratic),
        (3, LossKind::Ssim),
    ] {
        let model = perturb_model(&base, seed).unwrap();
        let clean = synthetic_scene(16, 16, seed);
        let noisy = add_gaussian_noise(&clean, 25.0, seed + 10).unwrap();
        let batch = prepare_samples(&[TrainingSample::new(noisy, clean).unwrap()], &model).unwrap();
        let (_, analytic) = loss_and_gradient_prepared(&model, &batch, kind).unwrap();
        let x = model.to_vector();
        let eps = 1e-4;
        let numeric: Vec<f64> = (0..x.len())
            .map(|i| {
                let mut xp = x.clone();
                xp[i] += eps;
                let lp = loss_prepared(&model.with_vector(&xp).unwrap(), &batch, kind).unwrap();
                xp[i] = x[i] - eps;
                let lm = loss_prepared(&model.with_vector(&xp).unwrap(), &batch, kind).unwrap();
                (lp - lm) / (2.0 * eps)
            })
            .collect();
        let labels = block_of_each(&model);
        for (k, slot) in worst.iter_mut().enumerate() {
            let pick = |v: &[f64]| -> Vec<f64> {
                v.iter()
                    .zip(&labels)
                    .filter(|(_, b)| **b == k)
                    .map(|(x, _)| *x)
                    .collect()
            };
            let err = relative_error(&pick(&analytic), &pick(&numeric));
            assert!(
                pick(&analytic).iter().any(|g| *g != 0.0),
                "block {} is degenerate",
                slot.0
            );
            slot.1 = slot.1.max(err);
        }
    }
    let elapsed = start.elapsed();
    let ok = worst.iter().all(|b| b.1 <= 1e-5) && elapsed <= Duration::from_secs(60);
    let detail = worst
        .iter()
        .map(|(b, e)| format!("{b}={e:.2e}"))
        .collect::<Vec<_>>()
        .join(" ");
    report(
        1,
        "gradient exactness",
        ok,
        format!("{detail} in {elapsed:.1?}"),
    );
    assert!(ok);
}

// ---------------------------------------------------------------- criterion 2

#[test]
fn criterion_2_local_degeneration() {
    let normal = Normal::new(0.0, 1.0).unwrap();
    let mut worst = 0.0f64;
    for trial in 0..20u64 {
        let mut r = rng(500 + trial);
        let m = if trial % 2 == 0 { 3 } else { 5 };
        let (w, h) = (r.random_range(m..14), r.random_range(m..14));
        let grid = RbfGrid {
            count: r.random_range(5..12),
            min: -200.0,
            max: 200.0,
            gamma: r.random_range(15.0..60.0),
        };
        let nk = r.random_range(1..=m * m - 1);
        let coeffs: Vec<Vec<f64>> = (0..nk)
            .map(|_| (0..m * m - 1).map(|_| normal.sample(&mut r)).collect())
            .collect();
        let alphas: Vec<Vec<f64>> = (0..nk)
            .map(|_| {
                (0..grid.count)
                    .map(|_| 5.0 * normal.sample(&mut r))
                    .collect()
            })
            .collect();
        let lambda_raw = r.random_range(-3.0..0.5);
        let stage = StageParameters {
            lambda_raw,
            filters: coeffs.iter().cloned().map(LocalFilterCoeffs).collect(),
            nonlocal: (0..nk).map(|_| vec![r.random_range(0.1..3.0)]).collect(),
            influence: alphas
                .iter()
                .map(|a| InfluenceWeights::new(grid, a.clone()).unwrap())
                .collect(),
        };
        let f = random_image(w, h, 600 + trial);
        let u = random_image(w, h, 700 + trial);
        let table = compute_neighbor_table(&f, 3, 5, 1).unwrap();
        let bank = dct_filter_bank(m).unwrap();
        let (got, _) = diffusion_step(&u, &f, &stage, &table, &bank).unwrap();
        let expected = local_step_oracle(&u, &f, lambda_raw.exp(), &coeffs, &alphas, grid, m);
        worst = worst.max(max_abs_diff(got.data(), expected.data()));
    }
    let ok = worst <= 1e-12;
    report(
        2,
        "L=1 degenerates to the local step",
        ok,
        format!("max |diff| = {worst:.2e} over 20 inputs"),
    );
    assert!(ok);
}

// ---------------------------------------------------------------- criterion 3

fn random_table(p: usize, l: usize, r: &mut impl Rng) -> NeighborTable {
    let mut idx = Vec::with_capacity(p * l);
    for n in 0..p {
        idx.push(n as u32);
        for _ in 1..l {
            idx.push(r.random_range(0..p as u32));
        }
    }
    NeighborTable::from_raw(p, l, idx).unwrap()
}

#[test]
fn criterion_3_operator_algebra() {
    let normal = Normal::new(0.0, 1.0).unwrap();
    let mut adjoint_gap = 0.0f64;
    for trial in 0..100u64 {
        let mut r = rng(800 + trial);
        let p = r.random_range(1..200);
        let l = r.random_range(1..7);
        let table = random_table(p, l, &mut r);
        let a = NonlocalWeights::new((0..l).map(|_| normal.sample(&mut r)).collect());
        let v: Vec<f64> = (0..p).map(|_| normal.sample(&mut r)).collect();
        let h: Vec<f64> = (0..p).map(|_| normal.sample(&mut r)).collect();
        let lhs = dot(&apply_nonlocal(&v, &table, &a).unwrap(), &h);
        let rhs = dot(&v, &apply_nonlocal_adjoint(&h, &table, &a).unwrap());
        adjoint_gap = adjoint_gap.max((lhs - rhs).abs());
    }

    let mut dense_gap = 0.0f64;
    let mut max_row_nnz = 0;
    let mut sparsity_ok = true;
    for trial in 0..10u64 {
        let mut r = rng(900 + trial);
        let f = random_image(8, 8, 950 + trial);
        let l = 1 + (trial as usize % 5);
        let table = compute_neighbor_table(&f, 3, 5, l).unwrap();
        let a = NonlocalWeights::new((0..l).map(|_| normal.sample(&mut r)).collect());
        let mut dense = vec![vec![0.0; 64]; 64];
        for (n, row) in dense.iter_mut().enumerate() {
            for (&q, w) in table.row(n).iter().zip(a.as_slice()) {
                row[q as usize] += w;
            }
        }
        for row in &dense {
            let nnz = row.iter().filter(|v| **v != 0.0).count();
            max_row_nnz = max_row_nnz.max(nnz);
            sparsity_ok &= nnz <= l;
        }
        let v: Vec<f64> = (0..64).map(|_| normal.sample(&mut r)).collect();
        dense_gap = dense_gap.max(max_abs_diff(
            &apply_nonlocal(&v, &table, &a).unwrap(),
            &matvec(&dense, &v),
        ));
        dense_gap = dense_gap.max(max_abs_diff(
            &apply_nonlocal_adjoint(&v, &table, &a).unwrap(),
            &matvec(&transpose(&dense), &v),
        ));

        let m = if trial % 2 == 0 { 3 } else { 5 };
        let k: Vec<f64> = (0..m * m).map(|_| normal.sample(&mut r)).collect();
        let kmat = convolution_matrix(8, 8, &k, m);
        let kernel = Kernel::new(m, k.clone()).unwrap();
        let u = random_image(8, 8, 990 + trial);
        dense_gap = dense_gap.max(max_abs_diff(
            convolve(&u, &kernel).unwrap().data(),
            &matvec(&kmat, u.data()),
        ));
        dense_gap = dense_gap.max(max_abs_diff(
            nlrd::image::convolve_adjoint(&u, &kernel).unwrap().data(),
            &matvec(&transpose(&kmat), u.data()),
        ));
    }
    let ok = adjoint_gap <= 1e-10 && dense_gap <= 1e-12 && sparsity_ok;
    report(
        3,
        "operator algebra",
        ok,
        format!(
            "adjoint gap {adjoint_gap:.2e} (100 trials), dense gap {dense_gap:.2e}, max row nnz {max_row_nnz}"
        ),
    );
    assert!(ok);
}

// ---------------------------------------------------------------- criterion 4

#[test]
fn criterion_4_block_matching_oracle() {
    let mut fixtures: Vec<(Image, usize, usize, usize)> = Vec::new();
    for (i, (w, h)) in [
        (3, 3),
        (5, 4),
        (6, 6),
        (8, 8),
        (11, 7),
        (16, 16),
        (16, 9),
        (9, 16),
    ]
    .into_iter()
    .enumerate()
    {
        let i = i as u64;
        fixtures.push((random_int_image(w, h, 256, 40 + i), 3, 5, 3));
        fixtures.push((random_int_image(w, h, 3, 50 + i), 3, 7, 4));
        fixtures.push((Image::filled(w, h, 17.0), 3, 3, 4));
        if w >= 5 && h >= 5 {
            fixtures.push((random_int_image(w, h, 8, 60 + i), 5, 7, 5));
            fixtures.push((random_int_image(w, h, 256, 70 + i), 5, 31, 6));
        }
    }
    // Planted repeats: the copy must be found first.
    let mut planted = random_int_image(16, 16, 256, 99);
    for y in 0..4 {
        for x in 0..4 {
            let v = planted.get(x + 2, y + 2);
            planted.set(x + 9, y + 8, v);
        }
    }
    fixtures.push((planted, 3, 15, 3));

    let mut mismatches = 0;
    let mut identity_first = true;
    for (f, patch, window, l) in &fixtures {
        let table = compute_neighbor_table(f, *patch, *window, *l).unwrap();
        let oracle = brute_force_table(f, *patch, *window, *l);
        for (n, row) in oracle.iter().enumerate() {
            let got: Vec<usize> = table.row(n).iter().map(|&q| q as usize).collect();
            identity_first &= got[0] == n;
            if &got != row {
                mismatches += 1;
            }
        }
    }
    let ok = mismatches == 0 && identity_first;
    report(
        4,
        "block matching oracle",
        ok,
        format!("{} fixtures, {mismatches} mismatching rows", fixtures.len()),
    );
    assert!(ok);
}

// ------------------------------------------------------------ criteria 5 and 6

struct ToyRun {
    noisy_psnr: f64,
    denoised_psnr: f64,
    losses: Vec<f64>,
    elapsed: Duration,
}

struct ToyResults {
    nonlocal: ToyRun,
    local: ToyRun,
}

const TOY_SIGMA: f64 = 25.0;

fn write_scenes(dir: &Path, seeds: std::ops::Range<u64>) {
    for s in seeds {
        write_image(
            &synthetic_scene(80, 72, s),
            dir.join(format!("scene{s:03}.pgm")),
        )
        .unwrap();
    }
}

fn toy_run(neighbors: usize, train_set: &[TrainingSample], held_out: &[TrainingSample]) -> ToyRun {
    let config = TrainConfig {
        hyper: Hyperparameters {
            filter_size: 5,
            neighbors,
            filters: 24,
            rbf: RbfGrid::default(),
            patch: 7,
            window: 31,
            sigma: TOY_SIGMA,
        },
        stages: 2,
        init: InitMode::Plain(InitOptions::default()),
        loss: LossKind::Quadratic,
        lbfgs: LbfgsConfig {
            max_iterations: 50,
            ..LbfgsConfig::default()
        },
    };
    let start = Instant::now();
    let mut losses = Vec::new();
    let outcome = single_thread(|| train(&config, train_set, |r| losses.push(r.loss))).unwrap();
    let elapsed = start.elapsed();
    let n = held_out.len() as f64;
    let noisy_psnr = held_out
        .iter()
        .map(|s| psnr(&s.f, &s.u_gt).unwrap())
        .sum::<f64>()
        / n;
    let denoised_psnr = held_out
        .iter()
        .map(|s| psnr(&denoise(&s.f, &outcome.model).unwrap(), &s.u_gt).unwrap())
        .sum::<f64>()
        / n;
    ToyRun {
        noisy_psnr,
        denoised_psnr,
        losses,
        elapsed,
    }
}

fn toy_results() -> &'static ToyResults {
    static RESULTS: OnceLock<ToyResults> = OnceLock::new();
    RESULTS.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let (train_dir, test_dir) = (dir.path().join("train"), dir.path().join("test"));
        std::fs::create_dir_all(&train_dir).unwrap();
        std::fs::create_dir_all(&test_dir).unwrap();
        write_scenes(&train_dir, 0..8);
        write_scenes(&test_dir, 100..104);
        let train_set = make_dataset(&train_dir, TOY_SIGMA, 1000, 64)
            .unwrap()
            .samples;
        let held_out = make_dataset(&test_dir, TOY_SIGMA, 2000, 64)
            .unwrap()
            .samples;
        assert_eq!((train_set.len(), held_out.len()), (8, 4));
        ToyResults {
            nonlocal: toy_run(3, &train_set, &held_out),
            local: toy_run(1, &train_set, &held_out),
        }
    })
}

#[test]
fn criterion_5_small_scale_training() {
    let run = &toy_results().nonlocal;
    let gain = run.denoised_psnr - run.noisy_psnr;
    let ok = gain >= 4.0 && run.elapsed <= Duration::from_secs(20 * 60);
    report(
        5,
        "small-scale training",
        ok,
        format!(
            "held-out PSNR {:.2} dB -> {:.2} dB (+{gain:.2} dB), trained in {:.0?} on one thread",
            run.noisy_psnr, run.denoised_psnr, run.elapsed
        ),
    );
    assert!(ok);
}

#[test]
fn criterion_6_nonlocal_benefit() {
    let r = toy_results();
    let diff = r.nonlocal.denoised_psnr - r.local.denoised_psnr;
    let ok = diff >= -0.05;
    report(
        6,
        "nonlocal benefit trend",
        ok,
        format!(
            "L=3 {:.2} dB vs L=1 {:.2} dB ({diff:+.2} dB)",
            r.nonlocal.denoised_psnr, r.local.denoised_psnr
        ),
    );
    assert!(ok);
}

#[test]
fn toy_training_best_loss_is_monotone() {
    for run in [&toy_results().nonlocal, &toy_results().local] {
        assert_eq!(run.losses.len(), 50);
        assert!(run.losses.windows(2).all(|w| w[1] <= w[0]));
    }
}

// ---------------------------------------------------------------- criterion 7

#[test]
fn criterion_7_metrics() {
    let u = random_image(40, 32, 1);
    let self_ssim = ssim(&u, &u).unwrap();
    let shifted = |d: f64| Image::from_fn(40, 32, |x, y| u.get(x, y) + d);
    let cases = [
        (
            psnr(&u, &shifted(25.0)).unwrap(),
            20.0 * (255.0f64 / 25.0).log10(),
        ),
        (psnr(&u, &shifted(-10.0)).unwrap(), 20.0 * (25.5f64).log10()),
        (psnr(&u, &shifted(1.0)).unwrap(), 20.0 * 255.0f64.log10()),
    ];
    let psnr_gap = cases.iter().map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let psnr_inf = psnr(&u, &u).unwrap() == f64::INFINITY;
    let mut ssim_gap = 0.0f64;
    for seed in 0..6 {
        let a = random_image(24 + seed as usize, 20, 10 + seed);
        let b = Image::from_fn(a.width(), a.height(), |x, y| {
            0.7 * a.get(x, y) + 0.3 * ((x * 31 + y * 17 + seed as usize * 5) % 256) as f64
        });
        ssim_gap = ssim_gap.max((ssim(&a, &b).unwrap() - ssim_definition(&a, &b)).abs());
    }
    let ok = (self_ssim - 1.0).abs() <= 1e-12 && psnr_gap <= 1e-9 && psnr_inf && ssim_gap <= 1e-8;
    report(
        7,
        "metrics",
        ok,
        format!("ssim(u,u) = {self_ssim}, psnr gap {psnr_gap:.1e}, ssim oracle gap {ssim_gap:.1e}"),
    );
    assert!(ok);
}

// ---------------------------------------------------------------- criterion 8

fn small_train_config() -> TrainConfig {
    TrainConfig {
        hyper: Hyperparameters {
            filter_size: 3,
            neighbors: 3,
            filters: 8,
            rbf: RbfGrid {
                count: 15,
                min: -140.0,
                max: 140.0,
                gamma: 20.0,
            },
            patch: 5,
            window: 11,
            sigma: 20.0,
        },
        stages: 2,
        init: InitMode::Plain(InitOptions::default()),
        loss: LossKind::Quadratic,
        lbfgs: LbfgsConfig {
            max_iterations: 6,
            ..LbfgsConfig::default()
        },
    }
}

fn run_cli(args: &[&str], threads: usize) -> Vec<u8> {
    let out = Command::new(env!("CARGO_BIN_EXE_nlrd"))
        .args(args)
        .env("RAYON_NUM_THREADS", threads.to_string())
        .env("RUST_LOG", "warn")
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    out.stdout
}

#[test]
fn criterion_8_determinism() {
    let samples: Vec<TrainingSample> = (0..4)
        .map(|i| {
            let clean = synthetic_scene(32, 32, 300 + i);
            let noisy = add_gaussian_noise(&clean, 20.0, 400 + i).unwrap();
            TrainingSample::new(noisy, clean).unwrap()
        })
        .collect();
    let config = small_train_config();
    let trained: Vec<Vec<f64>> = [1, 4, 1, 4]
        .into_iter()
        .map(|t| {
            threads(t, || {
                train(&config, &samples, |_| {}).unwrap().model.to_vector()
            })
        })
        .collect();
    let train_same = trained.iter().all(|v| {
        v.iter()
            .map(|x| x.to_bits())
            .eq(trained[0].iter().map(|x| x.to_bits()))
    });
    let model: DiffusionModel = train_from(
        config.initial_model().unwrap(),
        &samples,
        LossKind::Quadratic,
        &config.lbfgs,
        |_| {},
    )
    .unwrap()
    .model;

    let dir = tempfile::tempdir().unwrap();
    let model_path = dir.path().join("m.nlrd");
    save_model(&model, &model_path).unwrap();
    let clean_dir = dir.path().join("clean");
    std::fs::create_dir_all(&clean_dir).unwrap();
    for i in 0..3 {
        write_image(
            &synthetic_scene(40, 36, 500 + i),
            clean_dir.join(format!("c{i}.pgm")),
        )
        .unwrap();
    }
    let noisy_path = dir.path().join("noisy.pgm");
    write_image(
        &add_gaussian_noise(&synthetic_scene(40, 36, 600), 20.0, 7).unwrap(),
        &noisy_path,
    )
    .unwrap();

    let mut denoised = Vec::new();
    let mut evals = Vec::new();
    for (i, t) in [1, 4, 1, 4].into_iter().enumerate() {
        let out = dir.path().join(format!("den{i}.pgm"));
        run_cli(
            &[
                "denoise",
                "--model",
                model_path.to_str().unwrap(),
                "--in",
                noisy_path.to_str().unwrap(),
                "--out",
                out.to_str().unwrap(),
            ],
            t,
        );
        denoised.push(std::fs::read(&out).unwrap());
        evals.push(run_cli(
            &[
                "eval",
                "--model",
                model_path.to_str().unwrap(),
                "--clean",
                clean_dir.to_str().unwrap(),
                "--sigma",
                "20",
                "--seed",
                "3",
            ],
            t,
        ));
    }
    let f = nlrd::pgm::read_image(&noisy_path).unwrap();
    let lib_outputs: Vec<Vec<u64>> = [1, 4, 2]
        .into_iter()
        .map(|t| {
            threads(t, || {
                denoise(&f, &model)
                    .unwrap()
                    .data()
                    .iter()
                    .map(|v| v.to_bits())
                    .collect()
            })
        })
        .collect();

    let denoise_same =
        denoised.windows(2).all(|w| w[0] == w[1]) && lib_outputs.windows(2).all(|w| w[0] == w[1]);
    let eval_same = evals.windows(2).all(|w| w[0] == w[1]);
    let ok = train_same && denoise_same && eval_same;
    report(
        8,
        "determinism",
        ok,
        format!("train {train_same}, denoise {denoise_same}, eval {eval_same} across 1/2/4 threads and reruns"),
    );
    assert!(ok);
}
