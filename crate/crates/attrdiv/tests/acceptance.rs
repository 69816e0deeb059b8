//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails.
//!
//! Run alone with `cargo test -p attrdiv --test acceptance`.

use std::fs;
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use attrdiv::io::{read_attributes, write_embeddings};
use attrdiv_core::density::{fit_kde, scott_factor};
use attrdiv_core::divergence::{pad, sad};
use attrdiv_core::scoring::topk_classification_eval;
use attrdiv_core::synth::{gen_scores_stream, run_suite, Suite, SuiteOptions, SuiteOutcome, SynthSpec};
use attrdiv_core::{DivergenceConfig, EmbeddingKind, EmbeddingSet, ScoreMatrix, ScoreMode};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

type Outcome = Result<String, String>;

fn ensure(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn within_budget(start: Instant, budget: Duration, detail: String) -> Outcome {
    let took = start.elapsed();
    if took > budget {
        return Err(format!("{detail}; took {:.1}s, budget {}s", took.as_secs_f64(), budget.as_secs()));
    }
    Ok(format!("{detail}; {:.1}s", took.as_secs_f64()))
}

// Dense Gaussian KDE oracle: unbiased covariance, Scott factor, explicit
// inverse and determinant, one exp per kernel. Shares no code with the
// library.

fn oracle_covariance(samples: &[f64], d: usize) -> Vec<f64> {
    let n = samples.len() / d;
    let mut mean = vec![0.0; d];
    for row in samples.chunks(d) {
        for k in 0..d {
            mean[k] += row[k];
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut cov = vec![0.0; d * d];
    for row in samples.chunks(d) {
        for a in 0..d {
            for b in 0..d {
                cov[a * d + b] += (row[a] - mean[a]) * (row[b] - mean[b]);
            }
        }
    }
    cov.iter_mut().for_each(|c| *c /= (n - 1) as f64);
    cov
}

/// Gauss-Jordan inverse with partial pivoting, plus the determinant.
fn oracle_inverse(m: &[f64], d: usize) -> (Vec<f64>, f64) {
    let mut a = m.to_vec();
    let mut inv: Vec<f64> = (0..d * d).map(|i| if i / d == i % d { 1.0 } else { 0.0 }).collect();
    let mut det = 1.0;
    for c in 0..d {
        let p = (c..d).max_by(|&x, &y| a[x * d + c].abs().total_cmp(&a[y * d + c].abs())).unwrap();
        if p != c {
            for k in 0..d {
                a.swap(p * d + k, c * d + k);
                inv.swap(p * d + k, c * d + k);
            }
            det = -det;
        }
        let piv = a[c * d + c];
        det *= piv;
        for k in 0..d {
            a[c * d + k] /= piv;
            inv[c * d + k] /= piv;
        }
        for r in 0..d {
            if r != c {
                let f = a[r * d + c];
                for k in 0..d {
                    a[r * d + k] -= f * a[c * d + k];
                    inv[r * d + k] -= f * inv[c * d + k];
                }
            }
        }
    }
    (inv, det)
}

fn oracle_density(samples: &[f64], d: usize, point: &[f64]) -> f64 {
    let n = samples.len() / d;
    let f = (n as f64).powf(-1.0 / (d as f64 + 4.0));
    let mut cov = oracle_covariance(samples, d);
    let trace: f64 = (0..d).map(|k| cov[k * d + k]).sum();
    let (_, det) = oracle_inverse(&cov, d);
    if det.abs() < 1e-300 || (0..d).any(|k| cov[k * d + k] < 1e-12) {
        for k in 0..d {
            cov[k * d + k] += 1e-9 * trace / d as f64;
        }
    }
    let kcov: Vec<f64> = cov.iter().map(|c| c * f * f).collect();
    let (inv, det) = oracle_inverse(&kcov, d);
    let norm = 1.0 / ((2.0 * std::f64::consts::PI).powi(d as i32) * det).sqrt();
    let mut sum = 0.0;
    for row in samples.chunks(d) {
        let diff: Vec<f64> = (0..d).map(|k| point[k] - row[k]).collect();
        let mut q = 0.0;
        for a in 0..d {
            for b in 0..d {
                q += diff[a] * inv[a * d + b] * diff[b];
            }
        }
        sum += (-0.5 * q).exp();
    }
    norm * sum / n as f64
}

fn kde_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst: f64 = 0.0;
    let mut evaluated = 0;
    for cfg in 0..50 {
        let d = 1 + cfg % 3;
        let n = rng.random_range(d + 2..=1000);
        // Correlated, anisotropic samples: x = mu + A z.
        let a: Vec<f64> = (0..d * d).map(|_| rng.random_range(-2.0..2.0)).collect();
        let mu: Vec<f64> = (0..d).map(|_| rng.random_range(-50.0..50.0)).collect();
        let draw = |rng: &mut ChaCha8Rng, out: &mut Vec<f64>, spread: f64| {
            let z: Vec<f64> = (0..d).map(|_| spread * rng.sample::<f64, _>(StandardNormal)).collect();
            for r in 0..d {
                out.push(mu[r] + (0..d).map(|c| a[r * d + c] * z[c]).sum::<f64>() + 0.1 * z[r]);
            }
        };
        let mut samples = Vec::with_capacity(n * d);
        for _ in 0..n {
            draw(&mut rng, &mut samples, 1.0);
        }
        let model = fit_kde(&samples, d).map_err(|e| format!("config {cfg}: {e}"))?;
        // Fresh draws with inflated tails, plus a few sample points.
        let mut points = Vec::new();
        for _ in 0..35 {
            draw(&mut rng, &mut points, 1.5);
        }
        for _ in 0..5 {
            let i = rng.random_range(0..n);
            points.extend_from_slice(&samples[i * d..(i + 1) * d]);
        }
        let got = model.eval(&points).map_err(|e| e.to_string())?;
        for (p, g) in points.chunks(d).zip(&got) {
            let want = oracle_density(&samples, d, p);
            let rel = (g - want).abs() / want;
            worst = worst.max(rel);
            evaluated += 1;
            if !(rel <= 1e-9) {
                return Err(format!("config {cfg} (n={n}, d={d}) at {p:?}: got {g}, oracle {want}, rel {rel:e}"));
            }
        }
    }
    within_budget(start, Duration::from_secs(30), format!("50 configs, {evaluated} points, max rel err {worst:e} <= 1e-9"))
}

fn scott() -> Outcome {
    let f = scott_factor(32, 1).map_err(|e| e.to_string())?;
    if (f - 0.5).abs() > 1e-12 {
        return Err(format!("scott_factor(32, 1) = {f}"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let n = rng.random_range(2..5_000_000usize);
        let d = rng.random_range(1..=8usize);
        let got = scott_factor(n, d).map_err(|e| e.to_string())?;
        let want = (-(n as f64).ln() / (d as f64 + 4.0)).exp();
        let rel = (got - want).abs() / want;
        worst = worst.max(rel);
        if rel > 1e-12 {
            return Err(format!("scott_factor({n}, {d}) = {got}, want {want}"));
        }
    }
    let samples = [-1.0, 1.0];
    let model = fit_kde(&samples, 1).map_err(|e| e.to_string())?;
    ensure(
        (model.scott_factor() - 2f64.powf(-0.2)).abs() < 1e-12 && (model.kernel_std(0) - 1.23114).abs() < 1e-5,
        format!("scott_factor(32,1) = {f}; 100 random (n,d) max rel err {worst:e}"),
    )
}

fn identity_and_null() -> Outcome {
    let start = Instant::now();
    let cfg = DivergenceConfig::default();
    let spec = SynthSpec::standard(3, 50_000, 11).with_correlation(0, 1, 0.4);
    let x = gen_scores_stream(&spec, 0).map_err(|e| e.to_string())?;
    let y = gen_scores_stream(&spec, 1).map_err(|e| e.to_string())?;
    let same = sad(&x, &x, &cfg).map_err(|e| e.to_string())?.total;
    let null_sad = sad(&x, &y, &cfg).map_err(|e| e.to_string())?.total;
    let null_pad = pad(&x, &y, &cfg).map_err(|e| e.to_string())?.total;
    let detail = format!("sad(S,S) = {same:e} <= 1e-10; null SaD {null_sad:.2e}, PaD {null_pad:.2e} < 0.01");
    if same > 1e-10 || null_sad >= 0.01 || null_pad >= 0.01 {
        return Err(detail);
    }
    within_budget(start, Duration::from_secs(60), detail)
}

fn gaussian_kl() -> Outcome {
    let start = Instant::now();
    let base = SynthSpec::standard(1, 50_000, 21);
    let x = gen_scores_stream(&base, 0).map_err(|e| e.to_string())?;
    let y = gen_scores_stream(&base.clone().with_mean(0, 0.5), 1).map_err(|e| e.to_string())?;
    let kl = sad(&x, &y, &DivergenceConfig::default()).map_err(|e| e.to_string())?.total;
    let rel = (kl - 0.125).abs() / 0.125;
    let detail = format!("KL = {kl:.5} vs analytic 0.125 (rel {:.1}% <= 20%)", rel * 100.0);
    if rel > 0.2 {
        return Err(detail);
    }
    within_budget(start, Duration::from_secs(30), detail)
}

fn suite(s: Suite, opts: &SuiteOptions, budget: Duration) -> Outcome {
    let start = Instant::now();
    let out: SuiteOutcome = run_suite(s, opts, &DivergenceConfig::default()).map_err(|e| e.to_string())?;
    let detail = out
        .checks
        .iter()
        .map(|c| format!("{}{} {} {} {}", if c.passed { "" } else { "!" }, c.name, fmt(c.value), c.op, fmt(c.threshold)))
        .collect::<Vec<_>>()
        .join(", ");
    if !out.passed {
        return Err(detail);
    }
    within_budget(start, budget, detail)
}

fn fmt(v: f64) -> String {
    if v != 0.0 && (v.abs() < 1e-3 || v.abs() >= 1e4) {
        format!("{v:.3e}")
    } else {
        format!("{:.4}", v)
    }
}

fn write_set(dir: &Path, name: &str, kind: EmbeddingKind, ids: Vec<String>, rows: &[Vec<f64>]) {
    write_embeddings(&EmbeddingSet::from_rows(kind, ids, rows).unwrap(), &dir.join(name)).unwrap();
}

fn gaussian_rows(rng: &mut ChaCha8Rng, n: usize, dim: usize, shift: f64) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| (0..dim).map(|k| rng.sample::<f64, _>(StandardNormal) + if k == 0 { shift } else { 0.0 }).collect())
        .collect()
}

/// Captions, images and prompt embeddings for the full pipeline.
fn write_fixtures(dir: &Path) {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let vocab = ["smile", "hat", "beard", "eyeglasses", "bangs", "makeup", "earrings"];
    let mut caps = String::new();
    for i in 0..400 {
        let phrases: Vec<&str> = vocab.iter().enumerate().filter(|(j, _)| rng.random_range(0..10) < 7 - j).map(|(_, p)| *p).collect();
        caps.push_str(&serde_json::json!({"id": format!("c{i}"), "caption": "a photo", "phrases": phrases}).to_string());
        caps.push('\n');
    }
    fs::write(dir.join("captions.jsonl"), caps).unwrap();
    let dim = 24;
    let ids = |p: &str, n: usize| (0..n).map(|i| format!("{p}{i:05}")).collect::<Vec<_>>();
    write_set(dir, "train.adem", EmbeddingKind::Image, ids("t", 4000), &gaussian_rows(&mut rng, 4000, dim, 0.0));
    write_set(dir, "gen.adem", EmbeddingKind::Image, ids("g", 3500), &gaussian_rows(&mut rng, 3500, dim, 0.3));
    fs::write(dir.join("texts.rows"), serde_json::to_vec(&gaussian_rows(&mut rng, vocab.len(), dim, 0.0)).unwrap()).unwrap();
}

fn run_pipeline(fixtures: &Path, out: &Path, threads: &str, via_env: bool) -> Result<(), String> {
    fs::create_dir_all(out).unwrap();
    let run = |args: &[&str]| -> Result<(), String> {
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_attrdiv"));
        cmd.env_remove("ATTRDIV_THREADS");
        if via_env {
            cmd.env("ATTRDIV_THREADS", threads);
        } else {
            cmd.args(["--threads", threads]);
        }
        let o = cmd.args(args).output().map_err(|e| e.to_string())?;
        if !o.status.success() {
            return Err(format!("{args:?}: {}", String::from_utf8_lossy(&o.stderr)));
        }
        fs::write(out.join(format!("{}.stdout", args[0])), o.stdout).unwrap();
        Ok(())
    };
    let p = |name: &str| out.join(name).to_str().unwrap().to_string();
    let f = |name: &str| fixtures.join(name).to_str().unwrap().to_string();
    run(&["attrs", "--captions", &f("captions.jsonl"), "--top", "4", "--out", &p("attrs.json")])?;
    // Prompt embeddings are named after the selected attributes.
    let attrs = read_attributes(&out.join("attrs.json")).map_err(|e| e.to_string())?;
    let rows: Vec<Vec<f64>> = serde_json::from_slice(&fs::read(fixtures.join("texts.rows")).unwrap()).unwrap();
    write_set(out, "texts.adem", EmbeddingKind::Text, attrs.phrases().to_vec(), &rows[..attrs.len()]);
    run(&["score", "--images", &f("train.adem"), "--texts", &p("texts.adem"), "--out", &p("train_scores.adem")])?;
    run(&[
        "score",
        "--images",
        &f("gen.adem"),
        "--texts",
        &p("texts.adem"),
        "--centers",
        &p("train_scores.adem"),
        "--out",
        &p("gen_scores.adem"),
    ])?;
    let eval = ["eval", "--train", &p("train_scores.adem"), "--gen", &p("gen_scores.adem"), "--pairs", "--nway", "3"];
    run(&[&eval[..], &["--out", &p("report.json")]].concat())?;
    run(&["report", "--bundle", &p("report.json"), "--format", "csv", "--out", &p("report.csv")])?;
    run(&["report", "--bundle", &p("report.json"), "--format", "markdown", "--out", &p("report.md")])?;
    Ok(())
}

fn determinism() -> Outcome {
    let root = tempfile::tempdir().map_err(|e| e.to_string())?;
    let fixtures = root.path().join("fixtures");
    fs::create_dir_all(&fixtures).unwrap();
    write_fixtures(&fixtures);
    let runs = [("1", false, "t1a"), ("1", true, "t1b"), ("4", false, "t4a"), ("4", true, "t4b")];
    for (threads, via_env, name) in runs {
        run_pipeline(&fixtures, &root.path().join(name), threads, via_env)?;
    }
    let files = [
        "attrs.json",
        "texts.adem",
        "train_scores.adem",
        "gen_scores.adem",
        "report.json",
        "report.csv",
        "report.md",
        "attrs.stdout",
        "score.stdout",
        "eval.stdout",
    ];
    let mut bytes = 0;
    for file in files {
        let reference = fs::read(root.path().join("t1a").join(file)).map_err(|e| format!("{file}: {e}"))?;
        for (_, _, name) in &runs[1..] {
            let other = fs::read(root.path().join(name).join(file)).map_err(|e| format!("{file}: {e}"))?;
            if other != reference {
                return Err(format!("{file} differs between t1a and {name}"));
            }
        }
        bytes += reference.len();
    }
    Ok(format!("{} files ({bytes} bytes) byte-identical over 2 runs x threads {{1, 4}}", files.len()))
}

/// Brute-force top-k confusion counts.
fn topk_oracle(scores: &[f64], labels: &[bool], n: usize, m: usize) -> (Vec<(f64, f64)>, f64, f64, f64) {
    let mut per = Vec::new();
    let (mut tp_all, mut fp_all, mut fn_all) = (0usize, 0usize, 0usize);
    for j in 0..m {
        let k = (0..n).filter(|&i| labels[i * m + j]).count();
        let mut order: Vec<usize> = (0..n).collect();
        // Stable sort keeps lower rows first among equal scores.
        order.sort_by(|&a, &b| scores[b * m + j].partial_cmp(&scores[a * m + j]).unwrap());
        let mut predicted = vec![false; n];
        for &i in &order[..k] {
            predicted[i] = true;
        }
        let (mut tp, mut fp, mut fnn, mut tn) = (0, 0, 0, 0);
        for i in 0..n {
            match (predicted[i], labels[i * m + j]) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fnn += 1,
                (false, false) => tn += 1,
            }
        }
        let acc = (tp + tn) as f64 / n as f64;
        let f1 = if tp == 0 { 0.0 } else { 2.0 * tp as f64 / (2 * tp + fp + fnn) as f64 };
        per.push((acc, f1));
        tp_all += tp;
        fp_all += fp;
        fn_all += fnn;
    }
    let macro_acc = per.iter().map(|p| p.0).sum::<f64>() / m as f64;
    let macro_f1 = per.iter().map(|p| p.1).sum::<f64>() / m as f64;
    let micro = if tp_all == 0 { 0.0 } else { 2.0 * tp_all as f64 / (2 * tp_all + fp_all + fn_all) as f64 };
    (per, macro_acc, macro_f1, micro)
}

fn topk() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (n, m) = (200, 5);
    for inst in 0..100 {
        // Coarse scores so that ties occur.
        let scores: Vec<f64> = (0..n * m).map(|_| (rng.random_range(-100.0f64..100.0) / 10.0).round() * 10.0).collect();
        let mut labels: Vec<bool> = (0..n * m).map(|_| rng.random_bool(0.3)).collect();
        for j in 0..m {
            labels[j] = true;
            labels[m + j] = false;
        }
        let attrs = (0..m).map(|j| format!("a{j}")).collect();
        let matrix = ScoreMatrix::new(ScoreMode::Cs, attrs, scores.clone(), None).map_err(|e| e.to_string())?;
        let got = topk_classification_eval(&matrix, &labels).map_err(|e| e.to_string())?;
        let (per, macro_acc, macro_f1, micro) = topk_oracle(&scores, &labels, n, m);
        for (j, (acc, f1)) in per.iter().enumerate() {
            let g = &got.per_attribute[j];
            if g.accuracy != *acc || g.f1 != *f1 {
                return Err(format!("instance {inst}, column {j}: got ({}, {}), oracle ({acc}, {f1})", g.accuracy, g.f1));
            }
        }
        if got.macro_accuracy != macro_acc || got.macro_f1 != macro_f1 || got.micro_f1 != micro {
            return Err(format!("instance {inst}: aggregate mismatch"));
        }
    }
    Ok("100 instances of 200x5 match the brute-force confusion oracle exactly".into())
}

fn main() -> ExitCode {
    let defaults = SuiteOptions::default();
    let stability = SuiteOptions { stability_counts: vec![10_000, 50_000], ..defaults.clone() };
    let mins = |m: u64| Duration::from_secs(60 * m);
    let criteria: Vec<(&str, Box<dyn Fn() -> Outcome>)> = vec![
        ("kde_oracle_equivalence", Box::new(kde_oracle)),
        ("scott_factor_exactness", Box::new(scott)),
        ("kl_identity_and_null_band", Box::new(identity_and_null)),
        ("gaussian_kl_accuracy", Box::new(gaussian_kl)),
        ("injection_monotonicity", Box::new(move || suite(Suite::Injection, &defaults, mins(3)))),
        ("discernment", Box::new(|| suite(Suite::Discernment, &SuiteOptions::default(), mins(3)))),
        ("skip_detection", Box::new(|| suite(Suite::Skip, &SuiteOptions::default(), mins(2)))),
        ("overfitting_linearity", Box::new(|| suite(Suite::Overfit, &SuiteOptions::default(), mins(3)))),
        ("stability", Box::new(move || suite(Suite::Stability, &stability, mins(10)))),
        ("cli_determinism", Box::new(determinism)),
        ("topk_classification_oracle", Box::new(topk)),
    ];
    let only: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, check) in &criteria {
        if !only.is_empty() && !only.iter().any(|o| name.contains(o.as_str())) {
            continue;
        }
        match std::panic::catch_unwind(std::panic::AssertUnwindSafe(check)) {
            Ok(Ok(detail)) => println!("PASS {name}: {detail}"),
            Ok(Err(detail)) => {
                failed += 1;
                println!("FAIL {name}: {detail}");
            }
            Err(_) => {
                failed += 1;
                println!("FAIL {name}: panicked");
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
