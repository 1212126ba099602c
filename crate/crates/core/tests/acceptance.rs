//! Prints one PASS/FAIL line per acceptance criterion and exits non-zero if
//! any fails.

mod support;

use std::fs;
use std::path::Path;
use std::time::Instant;

use bolero::dataset::Task;
use bolero::gnnhead::HeadOptions;
use bolero::graph::{build_anchors, build_graph, count_cooccurrence, ppmi, GraphError, GraphOptions};
use bolero::pipeline::{cmd_compare, cmd_run, RunConfig, RESULTS_FILE};
use bolero::stats::{
    dersimonian_laird, friedman_test, median, rmse_reduction_percent, theta_from_reduction_percent,
    wilcoxon_signed_rank, ScoreTable, WilcoxonMethod,
};
use bolero::train::{head_task, linear_probe, train_run};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};
use support::gradcheck::{check_case, random_case};
use support::stats_oracle::{brute_ppmi, brute_wilcoxon_p, fixed_effect, gray_code_wilcoxon_p, textbook_friedman};
use support::toy::toy_table;
use support::xor::{prepare, xor_table, xor_train_config, ROWS};

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn gradient_correctness() -> Outcome {
    let start = Instant::now();
    let (mut worst, mut checked) = (0.0f64, 0);
    for seed in 0..24 {
        let case = random_case(seed, 20);
        ensure(case.graph.num_nodes() <= 20, || format!("case {seed} has too many nodes"))?;
        let r = check_case(&case, 1e-5);
        checked += r.checked;
        worst = worst.max(r.max_rel_error);
        ensure(r.max_rel_error < 1e-4, || format!("case {seed}: rel error {:.2e} at {}", r.max_rel_error, r.worst))?;
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(secs < 60.0, || format!("took {secs:.1}s"))?;
    Ok(format!("24 graphs, {checked} gradients, max rel error {worst:.2e}, {secs:.2}s"))
}

fn ppmi_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut pairs = 0;
    for t in 0..50 {
        let ds = toy_table(&mut rng, 30, 6);
        let anchors = build_anchors(&ds);
        ensure(anchors.len() <= 6, || format!("table {t}: {} anchors", anchors.len()))?;
        let stats = count_cooccurrence(&ds, &anchors, &GraphOptions::default());
        for a in &anchors {
            for b in anchors.iter().filter(|b| b.id != a.id) {
                match (ppmi(&stats, a.id, b.id), brute_ppmi(&ds, &a.kind, &b.kind)) {
                    (Ok(got), Some(want)) => {
                        ensure((got - want).abs() <= 1e-12, || format!("table {t} ({}, {}): {got} vs {want}", a.id, b.id))?;
                        ensure(got >= 0.0, || format!("negative ppmi {got}"))?;
                        let back = ppmi(&stats, b.id, a.id).map_err(|e| e.to_string())?;
                        ensure(got == back, || format!("asymmetric: {got} vs {back}"))?;
                        pairs += 1;
                    }
                    (Err(GraphError::ZeroMarginal(_)), None) => {}
                    other => return Err(format!("table {t}: mismatch {other:?}")),
                }
            }
        }
        let g = build_graph(&ds, &GraphOptions::default());
        ensure(g.aa_edges.iter().all(|e| e.a < e.b && e.weight > 0.0), || "malformed anchor edge".into())?;
    }
    Ok(format!("50 tables, {pairs} ordered anchor pairs match direct counting"))
}

fn wilcoxon_exactness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut worst = 0.0f64;
    for n in 5..=12 {
        let mut done = 0;
        while done < 200 {
            let e: Vec<f64> = if rng.gen_bool(0.5) {
                (0..n).map(|_| rng.gen_range(-4i32..=4) as f64 * 0.25).collect()
            } else {
                (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
            };
            let Ok(w) = wilcoxon_signed_rank(&e) else { continue };
            ensure(w.method == WilcoxonMethod::Exact, || format!("n={n} not exact"))?;
            let d = (w.p_value - brute_wilcoxon_p(&e)).abs();
            worst = worst.max(d);
            ensure(d <= 1e-12, || format!("n={n} {e:?}: off by {d:e}"))?;
            done += 1;
        }
    }
    let mut approx_worst = 0.0f64;
    let patterns: [fn(usize) -> bool; 3] = [|i| i % 2 == 0, |i| i % 3 != 0, |i| i < 12 || i % 5 == 0];
    for negative in patterns {
        let e: Vec<f64> = (1..=30).map(|i| if negative(i) { -(i as f64) } else { i as f64 }).collect();
        let w = wilcoxon_signed_rank(&e).map_err(|e| e.to_string())?;
        ensure(w.method == WilcoxonMethod::Normal, || "n=30 not approximated".into())?;
        let d = (w.p_value - gray_code_wilcoxon_p(&e)).abs();
        approx_worst = approx_worst.max(d);
        ensure(d < 0.01, || format!("n=30 approximation off by {d}"))?;
    }
    let anchor = wilcoxon_signed_rank(&[1.0, 2.0, 3.0, 4.0, 5.0]).map_err(|e| e.to_string())?.p_value;
    ensure(anchor == 0.0625, || format!("5 positive effects gave p={anchor}"))?;
    Ok(format!("1600 exact cases max diff {worst:.1e}; n=30 approx max diff {approx_worst:.4}; anchor p=0.0625"))
}

fn dersimonian_laird_oracle() -> Outcome {
    let m = dersimonian_laird(&[1.0, 3.0], &[1.0, 1.0]).map_err(|e| e.to_string())?;
    ensure((m.pooled - 2.0).abs() < 1e-9, || format!("pooled {}", m.pooled))?;
    ensure((m.tau2 - 1.0).abs() < 1e-9, || format!("tau2 {}", m.tau2))?;
    ensure((m.q - 2.0).abs() < 1e-9, || format!("Q {}", m.q))?;
    ensure((m.ci_half_width - 1.96).abs() < 1e-9, || format!("CI {}", m.ci_half_width))?;
    let v = [0.05, 0.2, 0.1, 0.4, 0.3];
    let d = [0.12; 5];
    let h = dersimonian_laird(&d, &v).map_err(|e| e.to_string())?;
    let (mean, half) = fixed_effect(&d, &v);
    ensure(h.tau2 == 0.0, || format!("homogeneous tau2 {}", h.tau2))?;
    ensure((h.pooled - mean).abs() < 1e-9 && (h.ci_half_width - half).abs() < 1e-9, || "not the inverse-variance mean".into())?;
    // small spread around a common value: Q < N-1, so tau2 truncates to 0
    let d2 = [0.10, 0.11, 0.09, 0.105, 0.095];
    let h2 = dersimonian_laird(&d2, &v).map_err(|e| e.to_string())?;
    ensure(h2.tau2 == 0.0 && (h2.pooled - fixed_effect(&d2, &v).0).abs() < 1e-9, || "low-Q case".into())?;
    Ok("d={1,3}, v={1,1}: pooled 2, Q 2, tau2 1, CI 1.96; homogeneous inputs reduce to the inverse-variance mean".into())
}

fn friedman_oracle() -> Outcome {
    let table = vec![vec![0.9, 0.8, 0.7], vec![0.6, 0.7, 0.5], vec![0.8, 0.6, 0.7], vec![0.5, 0.5, 0.4]];
    let f = friedman_test(&table, true).map_err(|e| e.to_string())?;
    let closed = 3.875 / (1.0 - 6.0 / 96.0);
    ensure((f.statistic - closed).abs() < 1e-9, || format!("{} vs {closed}", f.statistic))?;
    ensure((f.statistic - textbook_friedman(&table, true)).abs() < 1e-9, || "textbook mismatch".into())?;
    let same = friedman_test(&vec![vec![0.3; 3]; 4], true).map_err(|e| e.to_string())?;
    ensure(same.p_value == 1.0 && same.statistic == 0.0, || format!("identical scores gave p={}", same.p_value))?;
    Ok(format!("k=3, N=4 statistic {:.9} (closed form {closed:.9}), identical scores p=1", f.statistic))
}

fn effect_conversion() -> Outcome {
    let half = rmse_reduction_percent(2f64.ln());
    ensure((half - 50.0).abs() < 1e-12, || format!("ln 2 -> {half}"))?;
    let theta = theta_from_reduction_percent(20.3);
    ensure((theta - 0.227).abs() < 5e-4, || format!("20.3% -> {theta}"))?;
    Ok(format!("ln 2 -> {half:.12}%, 20.3% -> theta {theta:.5}"))
}

/// Returns the detail line and the test-label reads seen before final evaluation.
fn xor_graph_prior(reads: &mut Vec<usize>) -> Outcome {
    let start = Instant::now();
    let table = xor_table(ROWS, 7);
    let (mut head_f1, mut probe_f1) = (Vec::new(), Vec::new());
    for seed in 0..5u64 {
        let run = prepare(&table, seed);
        let head = HeadOptions::default().with_task(head_task(&run.data));
        let cfg = xor_train_config(seed);
        let model = train_run::<f32>(&run.data, &run.graph, &run.embeddings, &head, &cfg).map_err(|e| e.to_string())?;
        let probe = linear_probe(&run.data, &run.embeddings, &cfg).map_err(|e| e.to_string())?;
        reads.push(model.result.test_label_reads_before_final);
        reads.push(probe.test_label_reads_before_final);
        head_f1.push(model.result.test_metric);
        probe_f1.push(probe.test_metric);
    }
    let (h, p) = (median(&head_f1).unwrap(), median(&probe_f1).unwrap());
    let secs = start.elapsed().as_secs_f64();
    ensure(h >= 0.9, || format!("graph head median macro-F1 {h:.3} ({head_f1:?})"))?;
    ensure(p <= 0.6, || format!("linear probe median macro-F1 {p:.3} ({probe_f1:?})"))?;
    ensure(secs < 300.0, || format!("took {secs:.1}s"))?;
    Ok(format!("graph head median macro-F1 {h:.3}, linear probe {p:.3}, 5 seeds in {secs:.1}s"))
}

fn write_toy_run(dir: &Path) -> std::path::PathBuf {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut csv = String::from("shop,region,price,units,label\n");
    for _ in 0..80 {
        let shop = ["north", "south", "east", "west"][rng.gen_range(0..4)];
        let region = ["a", "b"][rng.gen_range(0..2)];
        let price: f64 = rng.gen_range(1.0..20.0);
        let units: f64 = if rng.gen_bool(0.1) { f64::NAN } else { rng.gen_range(0.0..100.0) };
        let label = if (shop == "north" || shop == "east") ^ (price > 10.0) { "high" } else { "low" };
        let units = if units.is_nan() { String::new() } else { format!("{units:.2}") };
        csv += &format!("{shop},{region},{price:.3},{units},{label}\n");
    }
    fs::write(dir.join("shops.csv"), csv).unwrap();
    let schema = json!({"task": "classification", "columns": [
        {"name": "shop", "kind": "categorical"}, {"name": "region", "kind": "categorical"},
        {"name": "price", "kind": "continuous"}, {"name": "units", "kind": "continuous"},
        {"name": "label", "kind": "target"}]});
    fs::write(dir.join("shops.schema.json"), schema.to_string()).unwrap();
    let cfg = json!({
        "datasets": [{"name": "shops", "csv": "shops.csv", "schema": "shops.schema.json"}],
        "embedding": {"kind": "stub", "dim": 16, "seed": 1},
        "head": {"hidden_dim": 16},
        "train": {"learning_rate": 0.01, "max_epochs": 40, "patience": 8},
        "seeds": [0, 1, 2, 3, 4],
        "output_dir": "out",
        "workers": 4
    });
    let path = dir.join("run.json");
    fs::write(&path, cfg.to_string()).unwrap();
    path
}

fn without_seconds(text: &str) -> String {
    text.lines()
        .map(|l| {
            let mut v: Value = serde_json::from_str(l).unwrap();
            v.as_object_mut().unwrap().remove("seconds");
            v.to_string() + "\n"
        })
        .collect()
}

fn leakage_and_determinism(xor_reads: &[usize], results: &mut Option<std::path::PathBuf>) -> Outcome {
    ensure(xor_reads.iter().all(|&r| r == 0), || format!("test labels read early: {xor_reads:?}"))?;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cfg = RunConfig::from_file(write_toy_run(dir.path())).map_err(|e| e.to_string())?;
    let first = cmd_run(&cfg).map_err(|e| e.to_string())?;
    let path = cfg.output_dir().join(RESULTS_FILE);
    let a = fs::read_to_string(&path).map_err(|e| e.to_string())?;
    let second = cmd_run(&cfg).map_err(|e| e.to_string())?;
    let b = fs::read_to_string(&path).map_err(|e| e.to_string())?;
    let runs = first.iter().chain(&second);
    ensure(runs.clone().all(|o| o.result.test_label_reads_before_final == 0), || "pipeline read test labels early".into())?;
    ensure(without_seconds(&a) == without_seconds(&b), || "results differ between identical runs".into())?;
    ensure(a.lines().count() == 5, || format!("{} result lines", a.lines().count()))?;
    let keep = std::env::temp_dir().join(format!("bolero-acceptance-{}.jsonl", std::process::id()));
    fs::write(&keep, &a).map_err(|e| e.to_string())?;
    *results = Some(keep);
    Ok(format!("{} runs with zero early test-label reads; 5-seed pipeline rerun byte-identical without wall-clock", xor_reads.len() + 10))
}

fn baseline_scores(path: &Path, method: &str, datasets: &[&str], rng: &mut impl Rng, tasks: &[Task]) {
    let mut s = String::new();
    for (d, task) in datasets.iter().zip(tasks) {
        for seed in 0..5u64 {
            let v = match task {
                Task::Classification => (rng.gen_range(0..6) as f64) / 10.0 + 0.3,
                Task::Regression => rng.gen_range(1..5) as f64,
            };
            let rec = json!({"dataset": d, "method": method, "seed": seed, "task": task, "metric_value": v});
            s += &format!("{rec}\n");
        }
    }
    fs::write(path, s).unwrap();
}

fn win_credit_conservation(pipeline_results: Option<&Path>) -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut checked_pairs = 0;
    let mut runs = 0;
    let mut check = |files: Vec<std::path::PathBuf>, tag: &str| -> Result<(), String> {
        let out = cmd_compare(&files, 0.05, &dir.path().join(tag)).map_err(|e| e.to_string())?;
        for c in &out.comparisons {
            for p in &c.pairs {
                let n = p.datasets as f64;
                ensure(p.credit_a + p.credit_b == n, || format!("{tag}: credits {} + {} != {n}", p.credit_a, p.credit_b))?;
                let rates = 100.0 * p.credit_a / n + 100.0 * p.credit_b / n;
                ensure((rates - 100.0).abs() < 1e-9, || format!("{tag}: pair win rates sum to {rates}"))?;
                checked_pairs += 1;
            }
            let total: f64 = c.leaderboard.iter().map(|r| r.win_rate_percent).sum();
            let expect = 50.0 * c.leaderboard.len() as f64;
            ensure((total - expect).abs() < 1e-9, || format!("{tag}: leaderboard rates sum to {total}"))?;
        }
        runs += 1;
        Ok(())
    };
    for trial in 0..10 {
        let k = 2 + trial % 4;
        let names: Vec<String> = (0..12).map(|d| format!("d{d}")).collect();
        let refs: Vec<&str> = names.iter().map(String::as_str).collect();
        let tasks: Vec<Task> = (0..12).map(|d| if d % 3 == 0 { Task::Regression } else { Task::Classification }).collect();
        let files: Vec<_> = (0..k)
            .map(|m| {
                let p = dir.path().join(format!("t{trial}_m{m}.jsonl"));
                baseline_scores(&p, &format!("m{m}"), &refs, &mut rng, &tasks);
                p
            })
            .collect();
        check(files, &format!("trial{trial}"))?;
    }
    if let Some(results) = pipeline_results {
        let base = dir.path().join("baseline.jsonl");
        baseline_scores(&base, "baseline", &["shops"], &mut rng, &[Task::Classification]);
        check(vec![results.to_path_buf(), base], "pipeline")?;
    }
    let table = ScoreTable::from_jsonl_files::<&Path>(&[]).map_err(|e| e.to_string())?;
    ensure(table.methods().is_empty(), || "empty table".into())?;
    Ok(format!("{runs} compare runs, {checked_pairs} pairs conserve credit"))
}

fn main() {
    let started = Instant::now();
    let mut failures = 0;
    let mut report = |name: &str, outcome: Outcome| match outcome {
        Ok(detail) => println!("PASS {name}: {detail}"),
        Err(detail) => {
            failures += 1;
            println!("FAIL {name}: {detail}");
        }
    };
    report("gradient correctness", gradient_correctness());
    report("PPMI oracle", ppmi_oracle());
    report("Wilcoxon exactness", wilcoxon_exactness());
    report("DerSimonian-Laird oracle", dersimonian_laird_oracle());
    report("Friedman oracle", friedman_oracle());
    report("effect conversion", effect_conversion());
    let mut reads = Vec::new();
    report("XOR graph-prior check", xor_graph_prior(&mut reads));
    let mut results = None;
    report("leakage and determinism", leakage_and_determinism(&reads, &mut results));
    report("win-credit conservation", win_credit_conservation(results.as_deref()));
    if let Some(p) = results {
        let _ = fs::remove_file(p);
    }
    println!("acceptance finished in {:.1}s", started.elapsed().as_secs_f64());
    if failures > 0 {
        std::process::exit(1);
    }
}
