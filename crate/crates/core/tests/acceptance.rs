//! End-to-end acceptance run: prints one PASS / FAIL / SKIP line per
//! criterion and exits non-zero if any criterion fails.
//!
//! Pass criterion numbers as arguments to run a subset
//! (`cargo test --test acceptance -- 3 4`). MNIST and CIFAR-10 locations come
//! from `RLS_PRUNE_MNIST_DIR` / `RLS_PRUNE_CIFAR_DIR` or `data/` under the
//! workspace root.

mod common;

use std::path::Path;
use std::time::{Duration, Instant};

use common::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rls_prune::checkpoint;
use rls_prune::config::Architecture;
use rls_prune::data::{load_dataset, Dataset, DatasetKind};
use rls_prune::metrics::{emit_metrics, RunMetrics};
use rls_prune::train::limit_datasets;
use rls_prune::{TrainConfig, Trainer};

enum Verdict {
    Pass(String),
    Fail(String),
    Skip(String),
}

fn check(failures: &mut Vec<String>, ok: bool, what: String) {
    if !ok {
        failures.push(what);
    }
}

fn verdict(failures: Vec<String>, detail: String) -> Verdict {
    if failures.is_empty() {
        Verdict::Pass(detail)
    } else {
        Verdict::Fail(format!("{}; {detail}", failures.join("; ")))
    }
}

fn criterion_3() -> Verdict {
    let start = Instant::now();
    let (mut rel, mut asym): (f64, f64) = (0.0, 0.0);
    for dim in [2, 4, 8] {
        for lambda in [0.99, 1.0] {
            let (r, a) = sherman_morrison_run(dim, lambda, 100 + dim as u64);
            rel = rel.max(r);
            asym = asym.max(a);
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let mut f = Vec::new();
    check(&mut f, rel <= 1e-6, format!("relative error {rel:.3e} > 1e-6"));
    check(&mut f, asym <= 1e-8, format!("asymmetry {asym:.3e} > 1e-8"));
    check(&mut f, secs < 1.0, format!("took {secs:.2}s"));
    verdict(f, format!("max rel err {rel:.2e}, max asymmetry {asym:.2e}, {secs:.3}s"))
}

fn criterion_4() -> Verdict {
    let start = Instant::now();
    let fc = gradient_check(&fc_6_8_4_2(), 5, 10, 41);
    let conv = gradient_check(&conv_2_3_pool_fc(), 3, 10, 42);
    let secs = start.elapsed().as_secs_f64();
    let mut f = Vec::new();
    check(&mut f, fc <= 1e-4, format!("fc rel err {fc:.3e}"));
    check(&mut f, conv <= 1e-4, format!("conv rel err {conv:.3e}"));
    check(&mut f, secs < 30.0, format!("took {secs:.1}s"));
    verdict(f, format!("fc {fc:.2e}, conv {conv:.2e}, {secs:.2}s"))
}

fn criterion_5() -> Verdict {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(51);
    let mut worst: f64 = 0.0;
    let mut f = Vec::new();
    for case in 0..50 {
        let (a, b, what) = pruning_equivalence_case(case, &mut rng);
        let d = max_abs_diff(&a, &b);
        worst = worst.max(d);
        check(&mut f, d <= 1e-10, format!("case {case} ({what}) differs by {d:.3e}"));
    }
    let secs = start.elapsed().as_secs_f64();
    check(&mut f, secs < 30.0, format!("took {secs:.1}s"));
    verdict(f, format!("50 cases, max diff {worst:.2e}, {secs:.2}s"))
}

fn criterion_6() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(61);
    let mut f = Vec::new();
    for i in 0..100 {
        if let Err(e) = scoring_instance(&mut rng) {
            f.push(format!("instance {i}: {e}"));
        }
    }
    verdict(f, "100 instances match brute force".into())
}

fn mnist() -> Option<(Dataset, Dataset)> {
    let dir = mnist_dir()?;
    Some(load_dataset(DatasetKind::Mnist, &dir).expect("MNIST files are present but unreadable"))
}

fn mnist_config(xi: f64, q: usize, epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        q,
        xi,
        ..TrainConfig::default()
    }
}

fn run_logged(label: &str, config: TrainConfig, train: &Dataset, test: &Dataset) -> (Trainer, Duration) {
    let start = Instant::now();
    let mut t = Trainer::new(config).expect("valid configuration");
    let epochs = t.config.epochs;
    t.run_until(epochs, train, test, |t| {
        let e = t.metrics.epochs.last().unwrap();
        if e.epoch % 10 == 0 || e.prune_event {
            eprintln!(
                "  [{label}] epoch {:>3} loss {:.5} test {:.2}% weights {:.1}%{} ({:.0}s)",
                e.epoch,
                e.train_loss,
                e.precision,
                e.total_weights_pct,
                if e.prune_event { " pruned" } else { "" },
                start.elapsed().as_secs_f64()
            );
        }
        Ok(())
    })
    .expect("training run failed");
    (t, start.elapsed())
}

fn last10_precision(m: &RunMetrics) -> f64 {
    m.final_summary().unwrap().0
}

fn criterion_1(data: &(Dataset, Dataset), pruned: &(Trainer, Duration)) -> Verdict {
    let (train, test) = data;
    let (unpruned, _) = run_logged("unpruned", mnist_config(0.4, 60, 60), train, test);
    let unpruned_prec = last10_precision(&unpruned.metrics);
    let (t, elapsed) = pruned;
    let m = &t.metrics;
    let last = m.epochs.last().unwrap();
    let pruned_prec = last10_precision(m);
    let events = t.report.events.len();
    let input_pct = last.layers[0].nodes_pct;
    let minutes = elapsed.as_secs_f64() / 60.0;
    let mut f = Vec::new();
    check(&mut f, unpruned_prec >= 98.0, format!("unpruned precision {unpruned_prec:.2}% < 98.0%"));
    check(&mut f, pruned_prec >= 97.5, format!("pruned precision {pruned_prec:.2}% < 97.5%"));
    check(
        &mut f,
        last.total_weights_pct <= 50.0,
        format!("retained weights {:.1}% > 50%", last.total_weights_pct),
    );
    check(&mut f, events >= 2, format!("{events} prune events < 2"));
    check(&mut f, input_pct < 100.0, "input layer kept all 784 features".into());
    check(&mut f, minutes <= 45.0, format!("pruned run took {minutes:.1} min"));
    verdict(
        f,
        format!(
            "unpruned {unpruned_prec:.2}%, pruned {pruned_prec:.2}% (final epoch {:.2}%), \
             nodes {:.1}%, weights {:.1}%, input {input_pct:.1}%, {events} events, {minutes:.1} min",
            last.precision, last.total_nodes_pct, last.total_weights_pct
        ),
    )
}

/// Stepwise non-increasing retention whose every drop is a prune epoch after `q`.
fn schedule_failures(label: &str, t: &Trainer, f: &mut Vec<String>) {
    let q = t.config.q;
    let mut prev: Option<&rls_prune::metrics::EpochMetrics> = None;
    for e in &t.metrics.epochs {
        let before: Vec<f64> = match prev {
            Some(p) => p.layers.iter().map(|l| l.nodes_pct).collect(),
            None => vec![100.0; e.layers.len()],
        };
        let now: Vec<f64> = e.layers.iter().map(|l| l.nodes_pct).collect();
        let increased = now.iter().zip(&before).any(|(a, b)| a > b);
        let dropped = now.iter().zip(&before).any(|(a, b)| a < b);
        check(f, !increased, format!("{label}: node count grew at epoch {}", e.epoch));
        if dropped {
            check(f, e.prune_event, format!("{label}: nodes dropped at epoch {} without an event", e.epoch));
            check(f, e.epoch > q, format!("{label}: nodes dropped at epoch {} <= q", e.epoch));
        }
        prev = Some(e);
    }
    let steps_per_epoch = t.step / t.epochs_done as u64;
    for ev in &t.report.events {
        check(
            f,
            ev.step % steps_per_epoch == 0 && ev.step > q as u64 * steps_per_epoch,
            format!("{label}: event at step {} is not an epoch boundary after q", ev.step),
        );
    }
}

fn criterion_2(data: &(Dataset, Dataset), pruned_04: &(Trainer, Duration)) -> Verdict {
    let (train, test) = data;
    let (t02, _) = run_logged("xi=0.2", mnist_config(0.2, 10, 60), train, test);
    let t04 = &pruned_04.0;
    let mut f = Vec::new();
    schedule_failures("xi=0.2", &t02, &mut f);
    schedule_failures("xi=0.4", t04, &mut f);
    let w02 = t02.metrics.epochs.last().unwrap().total_weights_pct;
    let w04 = t04.metrics.epochs.last().unwrap().total_weights_pct;
    check(&mut f, w04 <= w02, format!("xi=0.4 keeps {w04:.1}% weights > xi=0.2 {w02:.1}%"));
    verdict(
        f,
        format!(
            "final weights xi=0.2 {w02:.1}% ({} events), xi=0.4 {w04:.1}% ({} events)",
            t02.report.events.len(),
            t04.report.events.len()
        ),
    )
}

/// 2,000 training and 500 test samples in CIFAR-10 binary layout, each
/// class a distinct colour and stripe orientation under noise.
fn synthetic_cifar(dir: &Path) {
    let mut rng = ChaCha8Rng::seed_from_u64(71);
    let mut record = |label: u8| {
        let mut r = vec![label];
        let c = label as usize;
        for ch in 0..3 {
            for y in 0..32 {
                for x in 0..32 {
                    let stripe = if c % 2 == 0 { (x / (2 + c / 2)) % 2 } else { (y / (2 + c / 2)) % 2 };
                    let tint = if ch == c % 3 { 90.0 } else { 20.0 };
                    let v = 60.0 + tint * stripe as f64 + rng.gen_range(-40.0..40.0);
                    r.push(v.clamp(0.0, 255.0) as u8);
                }
            }
        }
        r
    };
    for b in 1..=5 {
        let bytes: Vec<u8> = (0..400).flat_map(|i| record(((i + b) % 10) as u8)).collect();
        std::fs::write(dir.join(format!("data_batch_{b}.bin")), bytes).unwrap();
    }
    let bytes: Vec<u8> = (0..500).flat_map(|i| record((i % 10) as u8)).collect();
    std::fs::write(dir.join("test_batch.bin"), bytes).unwrap();
}

fn criterion_7() -> Verdict {
    let tmp = tempfile::tempdir().unwrap();
    let (dir, source) = match cifar_dir() {
        Some(d) => (d, "CIFAR-10"),
        None => {
            synthetic_cifar(tmp.path());
            (tmp.path().to_path_buf(), "synthetic CIFAR-format data, CIFAR-10 not found")
        }
    };
    let config = TrainConfig {
        dataset: DatasetKind::Cifar10,
        arch: Architecture::MiniVgg,
        epochs: 3,
        q: 1,
        train_limit: Some(2000),
        test_limit: Some(500),
        ..TrainConfig::default()
    };
    let (train, test) = match load_dataset(DatasetKind::Cifar10, &dir) {
        Ok((a, b)) => limit_datasets(&config, a, b),
        Err(e) => return Verdict::Fail(format!("loading {}: {e}", dir.display())),
    };
    let start = Instant::now();
    let mut t = Trainer::new(config).unwrap();
    let result = t.run_until(3, &train, &test, |t| {
        let e = t.metrics.epochs.last().unwrap();
        eprintln!(
            "  [minivgg] epoch {} loss {:.5} test {:.1}% weights {:.1}%{}",
            e.epoch,
            e.train_loss,
            e.precision,
            e.total_weights_pct,
            if e.prune_event { " pruned" } else { "" }
        );
        Ok(())
    });
    let minutes = start.elapsed().as_secs_f64() / 60.0;
    if let Err(e) = result {
        return Verdict::Fail(format!("training failed: {e}"));
    }
    let m = &t.metrics.epochs;
    let (first, last) = (m[0].train_loss, m[m.len() - 1].train_loss);
    let mut f = Vec::new();
    check(&mut f, last < 0.8 * first, format!("loss {first:.5} -> {last:.5} is not below 80%"));
    check(&mut f, !t.report.events.is_empty(), "no prune event".into());
    if let Err(e) = t.network.check_consistency() {
        f.push(format!("state inconsistent after pruning: {e}"));
    }
    check(&mut f, minutes <= 30.0, format!("took {minutes:.1} min"));
    verdict(
        f,
        format!(
            "{source}; loss {first:.5} -> {last:.5}, {} events, weights {:.1}%, {minutes:.1} min",
            t.report.events.len(),
            m[m.len() - 1].total_weights_pct
        ),
    )
}

fn criterion_8(data: &(Dataset, Dataset)) -> Verdict {
    let config = TrainConfig {
        epochs: 10,
        q: 2,
        train_limit: Some(6000),
        test_limit: Some(1000),
        ..TrainConfig::default()
    };
    let (train, test) = limit_datasets(&config, data.0.clone(), data.1.clone());
    let dir = tempfile::tempdir().unwrap();
    let csv = |t: &Trainer, name: &str| {
        let p = dir.path().join(name);
        emit_metrics(&t.metrics, &t.report, &t.original_counts, &p).unwrap();
        std::fs::read(p).unwrap()
    };
    let a = rls_prune::train(config.clone(), &train, &test).unwrap();
    let b = rls_prune::train(config.clone(), &train, &test).unwrap();
    let (csv_a, csv_b) = (csv(&a, "a.csv"), csv(&b, "b.csv"));

    let ckpt = dir.path().join("epoch5.ckpt");
    let mut first = Trainer::new(config).unwrap();
    first.run_until(5, &train, &test, |_| Ok(())).unwrap();
    checkpoint::save(&first, &ckpt).unwrap();
    drop(first);
    let mut resumed = checkpoint::load(&ckpt).unwrap();
    resumed.run_until(10, &train, &test, |_| Ok(())).unwrap();
    let csv_r = csv(&resumed, "r.csv");

    let mut f = Vec::new();
    check(&mut f, csv_a == csv_b, "two seeded runs wrote different metrics".into());
    check(
        &mut f,
        resumed.metrics.epochs[9] == a.metrics.epochs[9],
        "resumed epoch-10 metrics differ".into(),
    );
    check(&mut f, csv_r == csv_a, "resumed metrics file differs".into());
    check(&mut f, resumed.network == a.network, "resumed network differs".into());
    verdict(
        f,
        format!(
            "{} metric bytes identical, resume at epoch 5 matches ({} prune events)",
            csv_a.len(),
            a.report.events.len()
        ),
    )
}

fn main() {
    let wanted: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let run = |n: u32| wanted.is_empty() || wanted.contains(&n);
    let mut lines: Vec<(u32, Verdict)> = Vec::new();
    let mut report = |n: u32, name: &str, v: Verdict| {
        let (tag, text) = match &v {
            Verdict::Pass(d) => ("PASS", d),
            Verdict::Fail(d) => ("FAIL", d),
            Verdict::Skip(d) => ("SKIP", d),
        };
        println!("criterion {n} ({name}): {tag} - {text}");
        lines.push((n, v));
    };

    if run(3) {
        report(3, "rank-one inverse update oracle", criterion_3());
    }
    if run(4) {
        report(4, "gradient oracle", criterion_4());
    }
    if run(5) {
        report(5, "pruning equivalence", criterion_5());
    }
    if run(6) {
        report(6, "scoring and selection oracle", criterion_6());
    }
    if run(7) {
        report(7, "mini-VGG smoke test", criterion_7());
    }

    let needs_mnist = [1, 2, 8].iter().any(|&n| run(n));
    let data = if needs_mnist { mnist() } else { None };
    match &data {
        None => {
            for (n, name) in [(8, "determinism and resume"), (1, "MNIST FNN reproduction"), (2, "multi-shot schedule")] {
                if run(n) {
                    report(n, name, Verdict::Skip("MNIST not found; set RLS_PRUNE_MNIST_DIR".into()));
                }
            }
        }
        Some(data) => {
            if run(8) {
                report(8, "determinism and resume", criterion_8(data));
            }
            if run(1) || run(2) {
                let pruned = run_logged("xi=0.4", mnist_config(0.4, 10, 60), &data.0, &data.1);
                if run(1) {
                    report(1, "MNIST FNN reproduction", criterion_1(data, &pruned));
                }
                if run(2) {
                    report(2, "multi-shot schedule", criterion_2(data, &pruned));
                }
            }
        }
    }

    let failed = lines.iter().filter(|(_, v)| matches!(v, Verdict::Fail(_))).count();
    let skipped = lines.iter().filter(|(_, v)| matches!(v, Verdict::Skip(_))).count();
    println!(
        "acceptance: {} passed, {failed} failed, {skipped} skipped",
        lines.len() - failed - skipped
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
