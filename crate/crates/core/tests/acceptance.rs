//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any
//! criterion fails.

mod common;

use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use common::*;
use layerscope::linalg::Matrix;
use layerscope::metrics::{auroc, aucpr, spearman};
use layerscope::pipeline::{correlate_series, eval_frozen, improvement_cell, worker_pool, EvalOptions};
use layerscope::pooling::PoolingStrategy;
use layerscope::probes::{cka, probe_all, tme, token_entropy};
use layerscope::surrogate::{fit_logistic_traced, fit_ridge_with, Preprocess, IRLS_GRAD_TOL};
use layerscope::synth::{generate, write_synth_container, SynthSpec};
use layerscope::tensorio::{write_scores, ExternalScoreFile, LayerStack};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within_time(elapsed: Duration, limit: Duration) -> Result<(), String> {
    check(elapsed < limit, || format!("took {elapsed:?}, limit {limit:?}"))
}

fn tme_exactness() -> Outcome {
    let start = Instant::now();
    let single = |rows: &[[f64; 2]]| {
        let stack = LayerStack::new(0, vec!["m".into()], vec![Matrix::from_rows(rows).unwrap()]).unwrap();
        tme(&stack).map_err(|e| e.to_string())
    };
    let cases = [
        ("identity", single(&[[1.0, 0.0], [0.0, 1.0]])?, 2f64.ln()),
        ("rank-1", single(&[[1.0, 0.0], [2.0, 0.0]])?, 0.0),
        ("diag(1,2)", single(&[[1.0, 0.0], [0.0, 2.0]])?, -(0.2 * 0.2f64.ln() + 0.8 * 0.8f64.ln())),
    ];
    let mut worst = 0f64;
    for (name, got, want) in cases {
        check((got - want).abs() < 1e-9, || format!("{name}: {got} vs {want}"))?;
        worst = worst.max((got - want).abs());
    }
    check((cases[2].2 - 0.500402).abs() < 1e-6, || "diag(1,2) analytic value".into())?;
    within_time(start.elapsed(), Duration::from_secs(1))?;
    Ok(format!("max |error| {worst:.1e}, {:?}", start.elapsed()))
}

fn cka_invariances() -> Outcome {
    let start = Instant::now();
    let mut rng = Rng::new(0xC4A);
    let (mut self_dev, mut rot_dev, mut scale_dev) = (0f64, 0f64, 0f64);
    let mut cases = 0;
    while cases < 200 {
        let n = rng.int(2, 32);
        let d = rng.int(1, 8);
        let x = rng.rows(n, d);
        let dy = rng.int(1, 8);
        let y = rng.rows(n, dy);
        let q = random_orthogonal(&mut rng, d);
        let c = rng.range(-10.0, 10.0);
        if c.abs() < 1e-3 {
            continue;
        }
        let (mx, my) = (matrix(&x), matrix(&y));
        let e = |r: Result<f64, _>| r.map_err(|e: layerscope::probes::ProbeError| e.to_string());
        let xx = e(cka(&mx, &mx))?;
        let xq = e(cka(&mx, &matrix(&mul(&x, &q))))?;
        let xc = e(cka(&mx, &mx.scale(c)))?;
        let xy = e(cka(&mx, &my))?;
        let yx = e(cka(&my, &mx))?;
        self_dev = self_dev.max((xx - 1.0).abs());
        rot_dev = rot_dev.max((xq - 1.0).abs());
        scale_dev = scale_dev.max((xc - 1.0).abs());
        check((xx - 1.0).abs() <= 1e-12, || format!("CKA(x,x) = {xx}"))?;
        check((xq - 1.0).abs() <= 1e-9, || format!("CKA(x,xQ) = {xq}"))?;
        check((xc - 1.0).abs() <= 1e-12, || format!("CKA(x,cx) = {xc} for c = {c}"))?;
        check(xy.to_bits() == yx.to_bits(), || format!("asymmetric: {xy} vs {yx}"))?;
        check((0.0..=1.0).contains(&xy), || format!("out of range: {xy}"))?;
        cases += 1;
    }
    within_time(start.elapsed(), Duration::from_secs(5))?;
    Ok(format!(
        "{cases} cases; max dev self {self_dev:.1e}, rotation {rot_dev:.1e}, scale {scale_dev:.1e}; {:?}",
        start.elapsed()
    ))
}

fn cka_oracle() -> Outcome {
    let mut rng = Rng::new(0x451C);
    let mut worst = 0f64;
    for _ in 0..100 {
        let n = rng.int(2, 6);
        let (dx, dy) = (rng.int(1, 3), rng.int(1, 3));
        let x = rng.rows(n, dx);
        let y = rng.rows(n, dy);
        let got = cka(&matrix(&x), &matrix(&y)).map_err(|e| e.to_string())?;
        let want = hsic_cka(&x, &y);
        worst = worst.max((got - want).abs());
        check((got - want).abs() < 1e-9, || format!("{got} vs HSIC {want}"))?;
    }
    Ok(format!("100 cases, max |Δ| {worst:.1e}"))
}

fn metric_oracles() -> Outcome {
    let mut rng = Rng::new(0xA0C);
    let mut sweeps = 0;
    for n in 2..=6 {
        for trial in 0..20 {
            let pool = if trial % 2 == 0 { 2 } else { 1_000_000 };
            let scores: Vec<f64> = (0..n).map(|_| rng.int(0, pool) as f64 / 3.0).collect();
            for mask in 1..(1u32 << n) - 1 {
                let labels: Vec<f64> = (0..n).map(|i| f64::from((mask >> i) & 1)).collect();
                let got = auroc(&scores, &labels).map_err(|e| e.to_string())?.value;
                let want = auroc_pairs(&scores, &labels);
                check((got - want).abs() <= 1e-12, || format!("{scores:?}/{labels:?}: {got} vs {want}"))?;
                let squashed: Vec<f64> = scores.iter().map(|s| (s / 1e5).tanh() * 3.0 + 1.0).collect();
                let cubed: Vec<f64> = scores.iter().map(|s| s.powi(3) - 7.0).collect();
                for t in [&squashed, &cubed] {
                    let v = auroc(t, &labels).map_err(|e| e.to_string())?.value;
                    check(v == got, || format!("not invariant: {v} vs {got}"))?;
                }
                sweeps += 1;
            }
        }
    }
    let ap = aucpr(&[0.9, 0.8, 0.7], &[1.0, 0.0, 1.0]).map_err(|e| e.to_string())?.value;
    check((ap - 5.0 / 6.0).abs() < 1e-9, || format!("AUCPR {ap}"))?;
    let rho = spearman(&[1.0, 2.0, 2.0, 3.0], &[1.0, 3.0, 2.0, 4.0]).map_err(|e| e.to_string())?.value;
    let want = 4.5 / 22.5f64.sqrt();
    check((rho - want).abs() < 1e-9, || format!("Spearman {rho} vs {want}"))?;
    let au = auroc(&[0.9, 0.3, 0.8, 0.1], &[1.0, 1.0, 0.0, 0.0]).map_err(|e| e.to_string())?.value;
    check((au - 0.75).abs() < 1e-12, || format!("AUROC {au}"))?;
    Ok(format!("{sweeps} label assignments; AUCPR {ap:.6}, Spearman {rho:.6}"))
}

fn surrogate_correctness() -> Outcome {
    let mut rng = Rng::new(0x5A9);
    let mut ridge_dev = 0f64;
    for _ in 0..200 {
        let d = rng.int(1, 3);
        let n = rng.int(2, 6);
        let x = rng.rows(n, d);
        let y: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
        let lambda = rng.range(0.1, 3.0);
        let model = fit_ridge_with(&matrix(&x), &y, lambda, Preprocess::Raw).map_err(|e| e.to_string())?;
        for (a, b) in model.weights.iter().zip(ridge_normal_equations(&x, &y, lambda)) {
            ridge_dev = ridge_dev.max((a - b).abs());
            check((a - b).abs() < 1e-8, || format!("ridge {a} vs {b}"))?;
        }
    }
    let mut worst_grad = 0f64;
    for _ in 0..50 {
        let n = rng.int(8, 40);
        let d = rng.int(1, 5);
        let x = rng.rows(n, d);
        let mut y: Vec<f64> = x
            .iter()
            .map(|r| if r[0] + rng.normal() > 0.0 { 1.0 } else { 0.0 })
            .collect();
        y[0] = 0.0;
        y[1] = 1.0;
        let lambda = rng.range(0.1, 3.0);
        let (_, trace) = fit_logistic_traced(&matrix(&x), &y, lambda, Preprocess::Standardize)
            .map_err(|e| e.to_string())?;
        worst_grad = worst_grad.max(trace.gradient_norm);
        check(trace.gradient_norm <= IRLS_GRAD_TOL, || format!("gradient {}", trace.gradient_norm))?;
    }
    let x = Matrix::from_rows(&[[-1.0], [1.0]]).unwrap();
    let (model, _) = fit_logistic_traced(&x, &[0.0, 1.0], 1.0, Preprocess::Raw).map_err(|e| e.to_string())?;
    let softplus = |z: f64| if z > 0.0 { z + (-z).exp().ln_1p() } else { z.exp().ln_1p() };
    let w_star = golden_section(|w| softplus(-w) + 0.5 * w * w, -5.0, 5.0, 1e-12);
    let w = model.weights[0];
    check((w - w_star).abs() < 1e-4, || format!("1-D weight {w} vs oracle {w_star}"))?;
    Ok(format!(
        "ridge max |Δ| {ridge_dev:.1e}; IRLS max gradient {worst_grad:.1e}; 1-D w {w:.6} vs {w_star:.6}"
    ))
}

fn compression_signature() -> Outcome {
    let start = Instant::now();
    let spec = SynthSpec::compression(2024);
    check(spec.num_layers == 6 && spec.dim == 16, || "preset shape".into())?;
    let out = generate(&spec).map_err(|e| e.to_string())?;
    let pool = worker_pool(1).map_err(|e| e.to_string())?;
    let probes = pool
        .install(|| probe_all(&spec.model_name, &out.stacks, PoolingStrategy::Mean))
        .map_err(|e| e.to_string())?;
    let options = EvalOptions {
        workers: 1,
        ..EvalOptions::default()
    };
    let curve = eval_frozen(&spec.model_name, &out.stacks, &out.manifest, &options).map_err(|e| e.to_string())?;
    let cell = improvement_cell(&curve).map_err(|e| e.to_string())?;

    let l = probes.tme.len();
    let tme_last = probes.tme[l - 1];
    let tme_min = probes.tme[..l - 1].iter().copied().fold(f64::INFINITY, f64::min);
    check(tme_last < tme_min - 0.2, || format!("tme last {tme_last} vs interior min {tme_min}"))?;
    let k = probes.adjacent_cka.len();
    let cka_last = probes.adjacent_cka[k - 1];
    let cka_min = probes.adjacent_cka[..k - 1].iter().copied().fold(f64::INFINITY, f64::min);
    check(cka_last <= cka_min - 0.1, || format!("cka last {cka_last} vs interior min {cka_min}"))?;
    check(cell.percent_change > 5.0, || format!("percent change {}", cell.percent_change))?;
    check(
        curve.direction.is_better(cell.best_nonfinal_score, cell.final_score),
        || "best non-final does not beat final".into(),
    )?;
    within_time(start.elapsed(), Duration::from_secs(30))?;
    Ok(format!(
        "tme last {tme_last:.3} vs min {tme_min:.3}; cka last {cka_last:.3} vs min {cka_min:.3}; \
         best non-final layer {} ({}) change {:+.1}%; {:?}",
        curve.best_nonfinal_layer,
        curve.metric,
        cell.percent_change,
        start.elapsed()
    ))
}

fn cli(args: &[&str]) -> Result<String, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_layerscope"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!("{args:?} failed: {}", String::from_utf8_lossy(&out.stderr)));
    }
    Ok(String::from_utf8_lossy(&out.stdout).into_owned())
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let c = tmp.path().join("c");
    let spec = SynthSpec::compression(11);
    let out = generate(&spec).map_err(|e| e.to_string())?;
    write_synth_container(&c, &spec, &out).map_err(|e| e.to_string())?;
    let (a, b) = (tmp.path().join("w1"), tmp.path().join("w8"));
    cli(&["eval", path(&c), "--out", path(&a), "--workers", "1"])?;
    cli(&["eval", path(&c), "--out", path(&b), "--workers", "8"])?;
    for f in ["curves.csv", "report.json"] {
        let x = fs::read(a.join(f)).map_err(|e| e.to_string())?;
        let y = fs::read(b.join(f)).map_err(|e| e.to_string())?;
        check(x == y, || format!("{f} differs between worker counts"))?;
    }
    Ok("curves.csv and report.json byte-identical for --workers 1 and 8".into())
}

fn correlation_machinery() -> Outcome {
    let frozen = [0.5, 0.7, 0.6];
    let affine: Vec<f64> = frozen.iter().map(|v| 4.0 * v - 1.5).collect();
    let r_aff = correlate_series(&frozen, &affine).map_err(|e| e.to_string())?;
    check((r_aff - 1.0).abs() < 1e-12, || format!("affine gives {r_aff}"))?;

    let finetuned = [0.6, 0.9, 0.7];
    let r = correlate_series(&frozen, &finetuned).map_err(|e| e.to_string())?;
    let oracle = pearson_direct(&frozen, &finetuned);
    check((r - oracle).abs() < 1e-6, || format!("{r} vs direct formula {oracle}"))?;

    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let suite: [(&str, [f64; 3], [f64; 3]); 3] = [
        ("pos", [0.1, 0.2, 0.3], [1.0, 2.0, 3.0]),
        ("neg", [0.1, 0.2, 0.3], [3.0, 2.0, 1.0]),
        ("mid", frozen, finetuned),
    ];
    let mut csv = String::from("model,task,metric,direction,layer,depth_percent,score\n");
    let mut args = vec!["correlate".to_string(), path(tmp.path()).to_string()];
    for (task, f, ft) in &suite {
        for (k, v) in f.iter().enumerate() {
            csv.push_str(&format!("m,{task},SPEARMAN,higher-better,{k},{},{v}\n", 50 * k));
        }
        let p = tmp.path().join(format!("{task}.json"));
        write_scores(
            &p,
            &ExternalScoreFile {
                model_name: "m".into(),
                task_name: task.to_string(),
                scores: ft.to_vec(),
            },
        )
        .map_err(|e| e.to_string())?;
        args.push("--scores".into());
        args.push(path(&p).to_string());
    }
    fs::write(tmp.path().join("curves.csv"), csv).map_err(|e| e.to_string())?;
    let out = tmp.path().join("out");
    args.push("--out".into());
    args.push(path(&out).to_string());
    let args: Vec<&str> = args.iter().map(String::as_str).collect();
    let stdout = cli(&args)?;
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("report.json")).map_err(|e| e.to_string())?)
            .map_err(|e| e.to_string())?;
    let median = report["correlations"]["median"].as_f64().ok_or("median missing")?;
    check((median - oracle).abs() < 1e-6, || format!("median {median} vs middle value {oracle}"))?;
    check(stdout.contains(&format!("median pearson: {oracle:.6}")), || stdout.clone())?;
    println!(
        "      note: 0.960769 is not the Pearson correlation of [0.5,0.7,0.6] and [0.6,0.9,0.7]; \
         the direct formula gives {oracle:.6}, which is what is checked"
    );
    Ok(format!("affine {r_aff}; pair {r:.6} (oracle {oracle:.6}); suite median {median:.6}"))
}

fn main() {
    // touch the entropy path once so lazy initialization does not count
    // against the first timed criterion
    let _ = token_entropy(&Matrix::identity(2));

    let criteria: [Criterion; 8] = [
        ("probe exactness (TME analytic values)", tme_exactness),
        ("CKA invariance suite", cka_invariances),
        ("CKA oracle equivalence (HSIC)", cka_oracle),
        ("metric oracles", metric_oracles),
        ("surrogate correctness", surrogate_correctness),
        ("end-to-end compression signature", compression_signature),
        ("eval determinism across worker counts", determinism),
        ("correlation machinery", correlation_machinery),
    ];
    let mut failed = 0;
    for (name, run) in criteria {
        match run() {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL  {name}: {why}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
