//! Acceptance checks, one line per criterion. Exits non-zero if any fails.

mod common;

use std::time::{Duration, Instant};

use ndarray::Array4;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spl_core::checkpoint;
use spl_core::config::{Preset, SplConfig};
use spl_core::data::{build_eval_pairing, Pairing, RatioBucket};
use spl_core::evaluator::{evaluate, BucketedReport};
use spl_core::gradcheck::max_relative_error;
use spl_core::losses::{
    discriminator_adv_loss, generator_adv_loss, prior_loss, reconstruction_loss, resize_mask, total_loss,
    GanVariant, LossConfig, LossReport,
};
use spl_core::metrics::{gaussian_taps, mae, psnr, ssim, SSIM_C1, SSIM_C2, SSIM_SIGMA, SSIM_WINDOW};
use spl_core::model::{model_inputs, SpadeModulation, SplModel, ADAPTER, SEMANTIC_LEARNER};
use spl_core::nn::ParamStore;
use spl_core::optim::Adam;
use spl_core::setup::{eval_masks, load_teacher, train_images};
use spl_core::trainer::{TrainLog, Trainer};
use tch::{Device, Kind, Tensor};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn secs(d: Duration) -> String {
    format!("{:.1}s", d.as_secs_f64())
}

fn t4(values: &[f64], shape: [i64; 4]) -> Tensor {
    Tensor::from_slice(values).view(shape)
}

fn shape_chain() -> Outcome {
    let start = Instant::now();
    let cfg = SplConfig::preset(Preset::Desk);
    let (c, d) = (cfg.model.feature_width, cfg.model.prior_channels);
    let model = SplModel::new(&cfg.model, 0, Kind::Float).unwrap();
    let mut bad = Vec::new();
    for size in [64usize, 128, 256] {
        let batch = common::fixed_batch(1, size, 1);
        let out = tch::no_grad(|| model.forward_sample(&batch)).unwrap();
        let q = size as i64 / 4;
        let s = size as i64;
        let checks = [
            ("F_m", out.feature.size(), vec![1, c, q, q]),
            ("S_m", out.prior.size(), vec![1, c, q, q]),
            ("S'_m", out.adapted.size(), vec![1, d, q, q]),
            ("output", out.output.size(), vec![1, 3, s, s]),
        ];
        for (name, got, want) in checks {
            if got != want {
                bad.push(format!("{name}@{size}: {got:?} != {want:?}"));
            }
        }
    }
    let el = start.elapsed();
    let pass = bad.is_empty() && el < Duration::from_secs(60);
    outcome(pass, format!("sizes 64/128/256, {} mismatches, {}", bad.len(), secs(el)))
}

fn loss_oracles() -> Outcome {
    let close = |a: f64, b: f64| (a - b).abs() <= 1e-6;
    let mut fails = Vec::new();

    let target = t4(&[1.0, 2.0, 3.0, 4.0], [1, 1, 2, 2]);
    let adapted = t4(&[0.0, 2.0, 3.0, 0.0], [1, 1, 2, 2]);
    let mask_s = t4(&[1.0, 0.0, 0.0, 1.0], [1, 1, 2, 2]);
    let p = prior_loss(&target, &adapted, &mask_s, 3.0).unwrap().double_value(&[]);
    if !close(p, (1.0 * 4.0 + 4.0 * 4.0) / 4.0) {
        fails.push(format!("prior {p}"));
    }

    let one = |v: f64| t4(&[v], [1, 1, 1, 1]);
    let r = reconstruction_loss(&one(0.5), &one(0.0), &one(1.0), 5.0).unwrap().double_value(&[]);
    if !close(r, 0.5 * (1.0 + 5.0)) {
        fails.push(format!("reconstruction {r}"));
    }

    let half = Tensor::full([1, 1, 4, 4], 0.5, (Kind::Double, Device::Cpu));
    let ln2 = 2f64.ln();
    for v in [GanVariant::Nonsaturating, GanVariant::PaperLiteral] {
        let g = generator_adv_loss(&half, v).double_value(&[]);
        if !close(g, ln2) {
            fails.push(format!("generator {v:?} {g}"));
        }
    }
    let dl = discriminator_adv_loss(&half, &half).double_value(&[]);
    if !close(dl, 2.0 * ln2) {
        fails.push(format!("discriminator {dl}"));
    }

    let cfg = LossConfig::default();
    let tot = total_loss(1.0, 2.0, 3.0, 0.0, &cfg).unwrap().total;
    if !close(tot, 15.0) {
        fails.push(format!("total {tot}"));
    }
    let defaults = [cfg.lambda_img, cfg.lambda_adv, cfg.lambda_prior, cfg.alpha, cfg.delta];
    if defaults != [10.0, 1.0, 1.0, 3.0, 5.0] {
        fails.push(format!("defaults {defaults:?}"));
    }
    outcome(fails.is_empty(), if fails.is_empty() { "5 oracles, defaults (10,1,1,3,5)".into() } else { fails.join("; ") })
}

fn gradients() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    let mut rand_t = |shape: [i64; 4], lo: f64, hi: f64| {
        let n = shape.iter().product::<i64>() as usize;
        let v: Vec<f64> = (0..n).map(|_| rng.gen_range(lo..hi)).collect();
        t4(&v, shape)
    };
    let shape = [2, 2, 2, 2];
    let target = rand_t(shape, -1.0, 1.0);
    let offset = rand_t(shape, 0.1, 1.0);
    let sign = rand_t(shape, -1.0, 1.0).sign();
    let pred = &target + &offset * &sign;
    let mask = rand_t([2, 1, 2, 2], 0.0, 1.0).round();
    let scores = rand_t([2, 1, 2, 2], 0.1, 0.9);
    let other = rand_t([2, 1, 2, 2], 0.1, 0.9);

    let mut errs: Vec<(&str, f64)> = vec![
        ("prior", max_relative_error(&pred, |x| prior_loss(&target, x, &mask, 3.0).unwrap())),
        ("reconstruction", max_relative_error(&pred, |x| reconstruction_loss(&target, x, &mask, 5.0).unwrap())),
        ("adv_g nonsaturating", max_relative_error(&scores, |x| generator_adv_loss(x, GanVariant::Nonsaturating))),
        ("adv_g paper-literal", max_relative_error(&scores, |x| generator_adv_loss(x, GanVariant::PaperLiteral))),
        ("adv_d real", max_relative_error(&scores, |x| discriminator_adv_loss(x, &other))),
        ("adv_d fake", max_relative_error(&scores, |x| discriminator_adv_loss(&other, x))),
    ];

    let mut store = ParamStore::new(4, Kind::Double);
    let spade = SpadeModulation::new(&mut store, "m", 3, 2, 4);
    let feature = rand_t([1, 3, 4, 4], -1.0, 1.0);
    let prior = rand_t([1, 2, 4, 4], -1.0, 1.0);
    let weights = rand_t([1, 3, 4, 4], -1.0, 1.0);
    errs.push((
        "spade wrt feature",
        max_relative_error(&feature, |x| (spade.forward(x, &prior).unwrap() * &weights).sum(Kind::Double)),
    ));
    errs.push((
        "spade wrt prior",
        max_relative_error(&prior, |p| (spade.forward(&feature, p).unwrap() * &weights).sum(Kind::Double)),
    ));

    let cfg = common::tiny_config();
    let model = SplModel::new(&cfg.model, 5, Kind::Double).unwrap();
    let c = cfg.model.feature_width;
    let s_m = rand_t([1, c, 4, 4], -1.0, 1.0);
    let w_a = rand_t([1, cfg.model.prior_channels, 4, 4], -1.0, 1.0);
    errs.push((
        "adapt_prior",
        max_relative_error(&s_m, |x| (model.generator.adapt_prior(x) * &w_a).sum(Kind::Double)),
    ));

    let worst = errs.iter().cloned().fold(("", 0.0), |a, b| if b.1 > a.1 { b } else { a });
    let el = start.elapsed();
    let pass = errs.iter().all(|(_, e)| *e < 1e-3) && el < Duration::from_secs(120);
    outcome(pass, format!("{} checks, worst {} = {:.2e}, {}", errs.len(), worst.0, worst.1, secs(el)))
}

fn distillation() -> Outcome {
    let start = Instant::now();
    let cfg = SplConfig::preset(Preset::Desk);
    let model = SplModel::new(&cfg.model, 0, Kind::Float).unwrap();
    let teacher = load_teacher(&cfg).unwrap();
    let batch = common::fixed_batch(cfg.train.batch_size, cfg.data.image_size, 21);
    let (_, enlarged) = model_inputs(&batch, Kind::Float).unwrap();
    let target = teacher.features(&batch.image_up.to_tch(Kind::Float)).unwrap();
    let mask_s = resize_mask(&batch.mask.to_tch(Kind::Float), &target);
    let before = common::copy_all(&model.g_store);
    let mut opt = Adam::new(cfg.train.adam);
    let mut losses = Vec::new();
    for _ in 0..300 {
        model.g_store.zero_grad();
        let adapted = model.generator.adapt_prior(&model.generator.semantic_encode(&enlarged));
        let l = prior_loss(&target, &adapted, &mask_s, cfg.loss.alpha).unwrap();
        losses.push(l.double_value(&[]));
        l.backward();
        opt.step(&model.g_store, cfg.train.lr_initial);
    }
    let last = tch::no_grad(|| {
        let adapted = model.generator.adapt_prior(&model.generator.semantic_encode(&enlarged));
        prior_loss(&target, &adapted, &mask_s, cfg.loss.alpha).unwrap().double_value(&[])
    });
    let outside: Vec<_> = common::changed(&before, &model.g_store)
        .into_iter()
        .filter(|n| !n.starts_with(SEMANTIC_LEARNER) && !n.starts_with(ADAPTER))
        .collect();
    let reduction = 1.0 - last / losses[0];
    let el = start.elapsed();
    let pass = reduction >= 0.5 && outside.is_empty() && el < Duration::from_secs(300);
    outcome(
        pass,
        format!(
            "prior loss {:.4} -> {:.4} ({:.1}% reduction), {} other params moved, {}",
            losses[0],
            last,
            100.0 * reduction,
            outside.len(),
            secs(el)
        ),
    )
}

/// A finished desk-profile run.
struct DeskRun {
    trainer: Trainer,
    reports: Vec<LossReport>,
    report: BucketedReport,
    teacher_intact_at_500: bool,
    teacher_intact_at_end: bool,
    elapsed: Duration,
}

const DESK_STEPS: u64 = 2000;

fn desk_config(use_spade: bool) -> SplConfig {
    let mut cfg = SplConfig::preset(Preset::Desk);
    cfg.model.use_spade = use_spade;
    cfg.train.max_steps = Some(DESK_STEPS);
    cfg
}

fn training_pairing(cfg: &SplConfig) -> (spl_core::data::ImageSet, spl_core::data::MaskSet, Pairing) {
    let images = train_images(cfg).unwrap();
    let masks = eval_masks(cfg, &cfg.data.buckets().unwrap()).unwrap();
    let pairing = build_eval_pairing(&images.ids, &masks.ids, cfg.eval.pairing_seed).unwrap();
    (images, masks, pairing)
}

fn desk_run(use_spade: bool) -> DeskRun {
    let start = Instant::now();
    let cfg = desk_config(use_spade);
    let mut trainer = Trainer::from_config(cfg.clone()).unwrap();
    let teacher_bytes = trainer.teacher.to_bytes().unwrap();
    let mut reports = Vec::new();
    let mut teacher_intact_at_500 = false;
    while trainer.global_step < DESK_STEPS {
        let batch = trainer.data.batch(trainer.global_step).unwrap();
        reports.push(trainer.train_step(&batch).unwrap());
        if trainer.global_step == 500 {
            teacher_intact_at_500 = trainer.teacher.to_bytes().unwrap() == teacher_bytes;
        }
        if trainer.global_step % 500 == 0 {
            eprintln!(
                "  [{}] step {} total {:.4} ({})",
                if use_spade { "spade" } else { "concat" },
                trainer.global_step,
                reports.last().unwrap().total,
                secs(start.elapsed())
            );
        }
    }
    let teacher_intact_at_end = trainer.teacher.to_bytes().unwrap() == teacher_bytes;
    let elapsed = start.elapsed();
    let (images, masks, pairing) = training_pairing(&cfg);
    let report = evaluate(&trainer.model, &images, &masks, &pairing, true, cfg.data.fill).unwrap();
    DeskRun {
        trainer,
        reports,
        report,
        teacher_intact_at_500,
        teacher_intact_at_end,
        elapsed,
    }
}

fn all_psnr(r: &BucketedReport) -> f64 {
    r.row("All").and_then(|row| row.means).map_or(f64::NAN, |m| m.psnr)
}

fn overfit(run: &DeskRun) -> Outcome {
    let windows: Vec<f64> = run.reports[..1000]
        .chunks(100)
        .map(|w| w.iter().map(|r| r.total).sum::<f64>() / 100.0)
        .collect();
    let decreasing = windows.windows(2).all(|w| w[1] < w[0]);
    let p = all_psnr(&run.report);
    let pass = decreasing && p > 25.0 && run.elapsed < Duration::from_secs(30 * 60);
    let shown: Vec<String> = windows.iter().map(|w| format!("{w:.3}")).collect();
    outcome(
        pass,
        format!(
            "composited PSNR {p:.2} dB, 100-step means [{}], {} steps in {}",
            shown.join(" "),
            run.reports.len(),
            secs(run.elapsed)
        ),
    )
}

fn ablations(spade: &DeskRun, concat: &DeskRun) -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = SplConfig::preset(Preset::Desk);
    cfg.loss.use_prior = false;
    let mut t = Trainer::from_config(cfg).unwrap();
    let log_path = dir.path().join("train_log.csv");
    let mut log = TrainLog::create(&log_path).unwrap();
    let mut adapter_grad_max = 0.0f64;
    for s in 0..50 {
        let r = t.train_step(&t.data.batch(s).unwrap()).unwrap();
        log.write(t.global_step, &r, t.current_lr()).unwrap();
        for (name, p) in t.model.g_store.params() {
            if name.starts_with(ADAPTER) {
                let g = p.grad();
                if g.defined() {
                    adapter_grad_max = adapter_grad_max.max(g.abs().max().double_value(&[]));
                }
            }
        }
    }
    log.flush().unwrap();
    let text = std::fs::read_to_string(&log_path).unwrap();
    let prior_col: Vec<f64> = text
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(2).unwrap().parse().unwrap())
        .collect();
    let prior_zero = prior_col.len() == 50 && prior_col.iter().all(|&v| v == 0.0);

    let batch = common::fixed_batch(2, 64, 8);
    let shapes = |m: &SplModel| {
        let o = tch::no_grad(|| m.forward_sample(&batch)).unwrap();
        vec![o.feature.size(), o.prior.size(), o.adapted.size(), o.output.size()]
    };
    let same_shapes = shapes(&spade.trainer.model) == shapes(&concat.trainer.model)
        && concat.reports.len() == spade.reports.len();

    let (ps, pc) = (all_psnr(&spade.report), all_psnr(&concat.report));
    let pass = prior_zero && adapter_grad_max == 0.0 && same_shapes && ps >= pc;
    outcome(
        pass,
        format!(
            "wo-S l_prior all zero: {prior_zero}, adapter |grad| max {adapter_grad_max}; concat shapes equal: {same_shapes}; training PSNR spade {ps:.2} vs concat {pc:.2}"
        ),
    )
}

/// Independent SSIM: explicit 2-D weighted sums at every valid window.
fn ssim_direct(a: &Array4<f32>, b: &Array4<f32>) -> f64 {
    let g = gaussian_taps(SSIM_WINDOW, SSIM_SIGMA);
    let gsum: f64 = g.iter().sum();
    let (n, c, h, w) = a.dim();
    let k = SSIM_WINDOW;
    let mut total = 0.0;
    let mut count = 0usize;
    for i in 0..n {
        for ch in 0..c {
            for y in 0..=h - k {
                for x in 0..=w - k {
                    let (mut ma, mut mb, mut aa, mut bb, mut ab) = (0.0, 0.0, 0.0, 0.0, 0.0);
                    for u in 0..k {
                        for v in 0..k {
                            let wt = g[u] * g[v] / (gsum * gsum);
                            let pa = a[[i, ch, y + u, x + v]] as f64;
                            let pb = b[[i, ch, y + u, x + v]] as f64;
                            ma += wt * pa;
                            mb += wt * pb;
                            aa += wt * pa * pa;
                            bb += wt * pb * pb;
                            ab += wt * pa * pb;
                        }
                    }
                    let (va, vb, cov) = (aa - ma * ma, bb - mb * mb, ab - ma * mb);
                    total += ((2.0 * ma * mb + SSIM_C1) * (2.0 * cov + SSIM_C2))
                        / ((ma * ma + mb * mb + SSIM_C1) * (va + vb + SSIM_C2));
                    count += 1;
                }
            }
        }
    }
    total / count as f64
}

fn metric_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut worst = 0.0f64;
    let mut exact = true;
    for _ in 0..100 {
        let a = Array4::from_shape_fn((1, 3, 16, 16), |_| rng.gen::<f32>());
        let b = Array4::from_shape_fn((1, 3, 16, 16), |_| rng.gen::<f32>());
        let (mut abs_sum, mut sq_sum) = (0.0f64, 0.0f64);
        for (x, y) in a.iter().zip(b.iter()) {
            let d = *x as f64 - *y as f64;
            abs_sum += d.abs();
            sq_sum += d * d;
        }
        let cnt = a.len() as f64;
        let want_psnr = 10.0 * (1.0 / (sq_sum / cnt)).log10();
        worst = worst
            .max((mae(&a, &b).unwrap() - abs_sum / cnt).abs())
            .max((psnr(&a, &b).unwrap() - want_psnr).abs())
            .max((ssim(&a, &b).unwrap() - ssim_direct(&a, &b)).abs());
        exact &= ssim(&a, &a).unwrap() == 1.0 && mae(&a, &a).unwrap() == 0.0;
    }

    let buckets: Vec<_> = RatioBucket::all().collect();
    let images = spl_core::data::ImageSet::synthetic(5, 24, 32).unwrap();
    let masks = spl_core::data::MaskSet::generate(6, 24, &buckets, 32, 32).unwrap();
    let pairing = build_eval_pairing(&images.ids, &masks.ids, 7).unwrap();
    let r = evaluate(&spl_core::evaluator::ConstantInpainter(0.0), &images, &masks, &pairing, true, 0.0).unwrap();
    let partition = r.rows[..6].iter().map(|row| row.count).sum::<usize>() == r.row("All").unwrap().count;

    let pass = worst <= 1e-6 && exact && partition;
    outcome(
        pass,
        format!("100 pairs, max deviation {worst:.2e}; exact identities: {exact}; partition sums: {partition}"),
    )
}

fn determinism(spade: &DeskRun) -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let ckpt_path = dir.path().join("model.safetensors");
    let manifest_path = dir.path().join("pairing.tsv");
    checkpoint::save(&spade.trainer, &ckpt_path).unwrap();
    let cfg = &spade.trainer.config;
    let (images, masks, pairing) = training_pairing(cfg);
    pairing.write(&manifest_path).unwrap();
    let eval_once = || {
        let model = checkpoint::load(&ckpt_path).unwrap().model().unwrap();
        let pairing = Pairing::read(&manifest_path).unwrap();
        let r = evaluate(&model, &images, &masks, &pairing, true, cfg.data.fill).unwrap();
        (r.to_csv(), r.to_json())
    };
    let (a, b) = (eval_once(), eval_once());
    let reports_identical = a.0.as_bytes() == b.0.as_bytes() && a.1.as_bytes() == b.1.as_bytes();

    let cfg = SplConfig::preset(Preset::Desk);
    let mut straight = Trainer::from_config(cfg.clone()).unwrap();
    for s in 0..3 {
        straight.train_step(&straight.data.batch(s).unwrap()).unwrap();
    }
    let snap = dir.path().join("step3.safetensors");
    checkpoint::save(&straight, &snap).unwrap();
    let next_straight = straight.train_step(&straight.data.batch(3).unwrap()).unwrap();
    let mut resumed = Trainer::from_config(cfg).unwrap();
    checkpoint::restore(&mut resumed, &checkpoint::load(&snap).unwrap()).unwrap();
    let next_resumed = resumed.train_step(&resumed.data.batch(3).unwrap()).unwrap();
    let continuation = next_straight == next_resumed;

    outcome(
        reports_identical && continuation,
        format!("re-evaluation byte-identical: {reports_identical}; resumed step 4 report identical: {continuation}"),
    )
}

fn teacher_freeze(spade: &DeskRun) -> Outcome {
    outcome(
        spade.teacher_intact_at_500 && spade.teacher_intact_at_end,
        format!(
            "teacher bytes identical after 500 steps: {}, after {} steps: {}",
            spade.teacher_intact_at_500,
            spade.reports.len(),
            spade.teacher_intact_at_end
        ),
    )
}

fn main() {
    tch::set_num_threads(1);
    let mut results: Vec<(u32, &str, Outcome)> = Vec::new();
    results.push((1, "shape chain", shape_chain()));
    results.push((2, "loss oracles", loss_oracles()));
    results.push((3, "gradient checks", gradients()));
    results.push((4, "distillation sanity", distillation()));
    eprintln!("training desk runs ({DESK_STEPS} steps each)...");
    let spade = desk_run(true);
    let concat = desk_run(false);
    results.push((5, "overfit convergence", overfit(&spade)));
    results.push((6, "ablation separations", ablations(&spade, &concat)));
    results.push((7, "metric oracles", metric_oracles()));
    results.push((8, "protocol determinism", determinism(&spade)));
    results.push((9, "teacher freeze", teacher_freeze(&spade)));

    results.sort_by_key(|r| r.0);
    for (id, name, o) in &results {
        println!("criterion {id} {name}: {} ({})", if o.pass { "PASS" } else { "FAIL" }, o.detail);
    }
    let failed = results.iter().filter(|r| !r.2.pass).count();
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
