use std::path::Path;

use adopt_core::cli::run_with;
use adopt_core::config::PromptBundle;
use adopt_core::shapley::{exact_shapley, ValueTable};
use adopt_core::tasks::{builtin_asset, builtin_task};

struct Output {
    code: i32,
    stdout: String,
    stderr: String,
}

fn adopt(args: &[&str]) -> Output {
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let argv = std::iter::once("adopt").chain(args.iter().copied());
    let code = run_with(argv, &mut out, &mut err);
    Output {
        code,
        stdout: String::from_utf8(out).unwrap(),
        stderr: String::from_utf8(err).unwrap(),
    }
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

const M3: [(&str, f64); 8] = [
    ("000", 0.50),
    ("100", 0.60),
    ("010", 0.55),
    ("001", 0.50),
    ("110", 0.70),
    ("101", 0.62),
    ("011", 0.57),
    ("111", 0.75),
];

#[test]
fn shapley_on_complete_table_prints_exact_values() {
    let dir = tempfile::tempdir().unwrap();
    let samples = dir.path().join("t.jsonl");
    let lines: Vec<String> = M3
        .iter()
        .map(|(z, v)| format!(r#"{{"z": "{z}", "v": {v}}}"#))
        .collect();
    std::fs::write(&samples, lines.join("\n")).unwrap();

    let out = adopt(&["shapley", "--samples", path(&samples), "--budget", "6"]);
    assert_eq!(out.code, 0, "{}", out.stderr);
    let report: serde_json::Value = serde_json::from_str(&out.stdout).unwrap();
    assert_eq!(report["method"], "exact");

    let value = |mask: u64| {
        let z: String = (0..3)
            .map(|i| if mask >> i & 1 == 1 { '1' } else { '0' })
            .collect();
        M3.iter().find(|(k, _)| *k == z).unwrap().1
    };
    let want = exact_shapley(&ValueTable::from_fn(3, value), 3).unwrap().phi;
    let got: Vec<f64> = serde_json::from_value(report["phi"].clone()).unwrap();
    for (g, w) in got.iter().zip(&want) {
        assert!((g - w).abs() < 1e-12);
    }
    let budgets: Vec<usize> = serde_json::from_value(report["budgets"].clone()).unwrap();
    assert_eq!(budgets.iter().sum::<usize>(), 6);
}

#[test]
fn shapley_on_partial_table_uses_the_kernel() {
    let dir = tempfile::tempdir().unwrap();
    let samples = dir.path().join("t.jsonl");
    let lines: Vec<String> = M3
        .iter()
        .filter(|(z, _)| *z != "110")
        .map(|(z, v)| format!(r#"{{"z": "{z}", "v": {v}}}"#))
        .collect();
    std::fs::write(&samples, lines.join("\n")).unwrap();
    let out = adopt(&["shapley", "--samples", path(&samples)]);
    assert_eq!(out.code, 0, "{}", out.stderr);
    assert!(out.stdout.contains(r#""method":"kernel_shap""#), "{}", out.stdout);

    let no_full: Vec<String> = M3[..7]
        .iter()
        .map(|(z, v)| format!(r#"{{"z": "{z}", "v": {v}}}"#))
        .collect();
    std::fs::write(&samples, no_full.join("\n")).unwrap();
    let out = adopt(&["shapley", "--samples", path(&samples)]);
    assert_eq!(out.code, 1);
    assert!(out.stderr.contains("all-strong"), "{}", out.stderr);
}

#[test]
fn optimize_with_zero_rounds_returns_initial_prompts() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("run.toml");
    std::fs::write(
        &config,
        "rounds = 0\noutput_dir = \"out\"\n[task]\nbuiltin = \"scripted-qa\"\n",
    )
    .unwrap();
    let out = adopt(&["optimize", "--config", path(&config)]);
    assert_eq!(out.code, 0, "{}", out.stderr);
    let bundle = PromptBundle::load(&dir.path().join("out/prompts.json")).unwrap();
    assert_eq!(bundle.prompts, builtin_task("scripted-qa").unwrap().prompts);
    let rounds = std::fs::read_to_string(dir.path().join("out/rounds.jsonl")).unwrap();
    assert!(rounds.is_empty());
}

#[test]
fn optimized_bundle_scores_with_eval() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("run.toml");
    std::fs::write(&config, "[task]\nbuiltin = \"scripted-qa\"\n").unwrap();
    let out_dir = dir.path().join("run");
    let out = adopt(&[
        "optimize",
        "--config",
        path(&config),
        "--output",
        path(&out_dir),
        "--jobs",
        "2",
    ]);
    assert_eq!(out.code, 0, "{}", out.stderr);
    assert!(
        out.stdout.contains("dev score 0.2500 -> 1.0000"),
        "{}",
        out.stdout
    );
    let rounds = std::fs::read_to_string(out_dir.join("rounds.jsonl")).unwrap();
    assert_eq!(rounds.lines().count(), 3);
    for r in 1..=3 {
        assert!(out_dir.join(format!("traces/round-{r:03}.jsonl")).exists());
    }

    let dev = dir.path().join("dev.jsonl");
    std::fs::write(&dev, builtin_asset("scripted-qa", "dev.jsonl").unwrap()).unwrap();
    let bundle = out_dir.join("prompts.json");
    let out = adopt(&["eval", "--bundle", path(&bundle), "--data", path(&dev)]);
    assert_eq!(out.code, 0, "{}", out.stderr);
    let report: serde_json::Value = serde_json::from_str(&out.stdout).unwrap();
    assert_eq!(report["score"], 1.0);
    assert_eq!(report["cases"], 4);
}

#[test]
fn simulate_is_repeatable() {
    let args = ["simulate", "--policy", "shapley", "--runs", "50", "--seed", "7"];
    let a = adopt(&args);
    let b = adopt(&args);
    assert_eq!(a.code, 0, "{}", a.stderr);
    assert_eq!(a.stdout, b.stdout);
    assert!(a.stdout.contains("shapley"));

    let dir = tempfile::tempdir().unwrap();
    let runs = dir.path().join("runs.jsonl");
    let out = adopt(&["simulate", "--runs", "5", "--out", path(&runs)]);
    assert_eq!(out.code, 0, "{}", out.stderr);
    let lines: Vec<serde_json::Value> = std::fs::read_to_string(&runs)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), 15);
    assert_eq!(lines[0]["policy"], "uniform");
    assert_eq!(lines[14]["run"], 4);
}

#[test]
fn printed_defaults_pass_check() {
    let out = adopt(&["config", "--print-defaults"]);
    assert_eq!(out.code, 0);
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("defaults.toml");
    std::fs::write(&config, &out.stdout).unwrap();
    let check = adopt(&["config", "--check", path(&config)]);
    assert_eq!(check.code, 0, "{}", check.stderr);
    assert_eq!(check.stdout.trim(), "ok: 2 steps, 6 train / 4 dev cases");
}

#[test]
fn config_errors_exit_one_with_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("bad.toml");
    std::fs::write(&config, "[selector]\nbudget = 8\ncoalition_quota = 1\n").unwrap();
    let out = adopt(&["config", "--check", path(&config)]);
    assert_eq!(out.code, 1);
    assert!(out.stderr.contains("coalition_quota"), "{}", out.stderr);

    let missing = adopt(&["optimize", "--config", path(&dir.path().join("nope.toml"))]);
    assert_eq!(missing.code, 1);
    assert!(missing.stderr.contains("nope.toml"), "{}", missing.stderr);

    assert_eq!(adopt(&["frobnicate"]).code, 1);
    assert_eq!(adopt(&["simulate", "--policy", "greedy"]).code, 1);
}

#[test]
fn runtime_failures_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("empty.json"), r#"{"rules": []}"#).unwrap();
    let config = dir.path().join("run.toml");
    std::fs::write(
        &config,
        "[task]\nbuiltin = \"scripted-qa\"\n[backend]\nkind = \"scripted\"\nscript = \"empty.json\"\n",
    )
    .unwrap();
    let out = adopt(&[
        "optimize",
        "--config",
        path(&config),
        "--output",
        path(&dir.path().join("o")),
    ]);
    assert_eq!(out.code, 2, "{}", out.stderr);
    assert!(out.stderr.starts_with("error:"));
}

#[test]
fn help_exits_zero() {
    let out = adopt(&["--help"]);
    assert_eq!(out.code, 0);
    for sub in ["optimize", "eval", "shapley", "simulate", "config"] {
        assert!(out.stdout.contains(sub));
    }
}
