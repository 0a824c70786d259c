//! End-to-end command coverage on a small workspace: every verb, the
//! ledger-cache guarantee, byte-identical report regeneration, and audit
//! closure (including a deliberate violation).

use desklab_cli::commands;
use desklab_cli::config::load_config;
use desklab_core::corpus::sample_text;
use desklab_core::model::ModelConfig;
use desklab_core::workspace::{Workspace, WorkspaceConfig};
use std::path::{Path, PathBuf};

const TINY_MODEL_TOML: &str =
    "{ n_layers = 1, d_model = 32, n_heads = 2, n_kv_heads = 2, d_ff = 64, context_len = 32, vocab_size = 257 }";

fn tiny_workspace(dir: &Path) -> Workspace {
    let config = WorkspaceConfig {
        context_len: 32,
        val_windows: 16,
        desk_model: ModelConfig {
            n_layers: 1,
            d_model: 32,
            n_heads: 2,
            n_kv_heads: 2,
            d_ff: 64,
            context_len: 32,
            vocab_size: 257,
        },
        ..WorkspaceConfig::default()
    };
    Workspace::create(dir, sample_text(9, 50_000).as_bytes(), config).unwrap()
}

fn write_config(dir: &Path, name: &str, body: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, body).unwrap();
    path
}

#[test]
fn run_search_ensemble_distill_fit_report_variance_audit() {
    let dir = tempfile::tempdir().unwrap();
    let ws_root = dir.path().join("ws");
    let mut ws = tiny_workspace(&ws_root);

    // --- run: sweep expands, second invocation is fully cached
    let run_cfg = write_config(
        dir.path(),
        "run.toml",
        &format!(
            r#"
[[run]]
d = 8000
model = {TINY_MODEL_TOML}
lr = 1e-3
epochs = [1, 2]
wd = 0.1
tag = "sweep"
"#
        ),
    );
    let cfg = load_config(&run_cfg).unwrap();
    let keys = commands::run::cmd_run(&mut ws, &cfg).unwrap();
    assert_eq!(keys.len(), 2);
    let ledger_len = ws.ledger.len();
    let keys2 = commands::run::cmd_run(&mut ws, &cfg).unwrap();
    assert_eq!(keys, keys2);
    assert_eq!(ws.ledger.len(), ledger_len, "cached rerun must not train");

    // --- batch-size ablation harness: all four runs complete and land in
    // the ledger (the direction is reported, never asserted)
    let batch_cfg = write_config(
        dir.path(),
        "batch.toml",
        &format!(
            r#"
[[run]]
d = 8000
model = {TINY_MODEL_TOML}
lr = 1e-3
epochs = 1
wd = 0.1
batch = [8, 16, 32, 64]
tag = "batch-ablation"
"#
        ),
    );
    let batch_keys = commands::run::cmd_run(&mut ws, &load_config(&batch_cfg).unwrap()).unwrap();
    assert_eq!(batch_keys.len(), 4);
    for k in &batch_keys {
        assert!(ws.ledger.get_run(k).is_some());
    }

    // --- search on an inline 2x2x2 grid
    let search_cfg = write_config(
        dir.path(),
        "search.toml",
        &format!(
            r#"
[search]
d = 8000
model = {TINY_MODEL_TOML}
recipe = "regularized"
budget = 64

[search.axes]
lr = [1e-3, 3e-3]
epochs = [1, 2]
wd = [0.0, 0.1]
"#
        ),
    );
    let tr = commands::search::cmd_search(&mut ws, &load_config(&search_cfg).unwrap()).unwrap();
    assert!(tr.optimum.certified);

    // --- ensemble: members + K sweep + K-law fit
    let ens_cfg = write_config(
        dir.path(),
        "ens.toml",
        &format!(
            r#"
[ensemble]
d = 8000
model = {TINY_MODEL_TOML}
hyper = {{ lr = 1e-3, epochs = 2, wd = 0.1 }}
k_max = 3
base_seed = 77
tag = "ens"
"#
        ),
    );
    let ens = commands::ensemble::cmd_ensemble(&mut ws, &load_config(&ens_cfg).unwrap()).unwrap();
    assert_eq!(ens.len(), 3);
    assert!(ens[2].val_loss <= ens[0].val_loss + 1e-9);
    assert!(ws_root.join("fits").join("ens-klaw.json").exists());

    // --- distill from the first sweep run, with the no-mix control
    let dist_cfg = write_config(
        dir.path(),
        "distill.toml",
        &format!(
            r#"
[distill]
teacher_keys = ["{}"]
synth_tokens = 40000
ratio = [1, 1]
student_model = {TINY_MODEL_TOML}
student = {{ lr = 1e-3, epochs = 2, wd = 0.1 }}
sample_seed = 5
d = 8000
init_seed = 31
data_seed = 32
no_mix_control = true
"#,
            keys[1]
        ),
    );
    let (mixed, control) =
        commands::distill::cmd_distill(&mut ws, &load_config(&dist_cfg).unwrap()).unwrap();
    assert!(mixed.final_val_loss.is_some());
    assert!(control.unwrap().final_val_loss.is_some());

    // --- fit from CSV (tiered, two axes)
    let csv = dir.path().join("points.csv");
    let mut csv_body = String::from("members,params,loss\n");
    for n in [1.0f64, 2.0, 4.0] {
        for k in [1.0f64, 2.0, 3.0, 4.0] {
            csv_body.push_str(&format!("{k},{n},{}\n", 0.4 / k + 0.2 / n + 3.0));
        }
    }
    std::fs::write(&csv, csv_body).unwrap();
    let fit_cfg = write_config(
        dir.path(),
        "fit.toml",
        &format!(
            r#"
[fit]
csv = "{}"
axes = ["members", "params"]
name = "tiered-demo"
"#,
            csv.display()
        ),
    );
    let doc =
        commands::fit::cmd_fit(&ws, &load_config(&fit_cfg).unwrap(), dir.path()).unwrap();
    match doc {
        desklab_cli::reportdoc::FitDoc::Tiered { tiered, .. } => {
            assert!((tiered.final_asymptote - 3.0).abs() < 1e-3);
        }
        _ => panic!("expected tiered fit"),
    }

    // --- report: byte-identical regeneration
    let klaw = ws_root.join("fits").join("ens-klaw.json");
    let rep = commands::report::cmd_report(&ws, std::slice::from_ref(&klaw), None, "demo").unwrap();
    let mut bytes = Vec::new();
    for artifact in &rep.artifacts {
        bytes.push(std::fs::read(artifact).unwrap());
    }
    let rep2 = commands::report::cmd_report(&ws, &[klaw], None, "demo").unwrap();
    for (artifact, before) in rep2.artifacts.iter().zip(&bytes) {
        assert_eq!(&std::fs::read(artifact).unwrap(), before, "artifact {artifact} changed");
    }

    // --- variance with k sweep
    let var_cfg = write_config(
        dir.path(),
        "var.toml",
        &format!(
            r#"
[variance]
d = 8000
model = {TINY_MODEL_TOML}
hyper = {{ lr = 1e-3, epochs = 1, wd = 0.1 }}
seeds = [3, 4]
"#
        ),
    );
    let var = commands::variance::cmd_variance(&mut ws, &load_config(&var_cfg).unwrap()).unwrap();
    assert_eq!(var.modes.len(), 3);
    for m in &var.modes {
        assert!(m.std >= 0.0);
        assert_eq!(m.k_sweep.len(), 2);
    }

    // a single seed is rejected up front
    let bad_var = write_config(
        dir.path(),
        "bad_var.toml",
        &format!(
            r#"
[variance]
d = 8000
model = {TINY_MODEL_TOML}
hyper = {{ lr = 1e-3, epochs = 1, wd = 0.1 }}
seeds = [3]
"#
        ),
    );
    assert!(commands::variance::cmd_variance(&mut ws, &load_config(&bad_var).unwrap()).is_err());

    // --- audit closes over everything written so far
    let audit = commands::audit::cmd_audit(&ws).unwrap();
    assert!(audit.checked > 0);
    assert!(audit.failures.is_empty());

    // corrupt one reported loss: audit must fail
    let mut rep_json: serde_json::Value =
        serde_json::from_slice(&std::fs::read(ws_root.join("reports/variance.json")).unwrap())
            .unwrap();
    rep_json["points"][0]["loss"] = serde_json::json!(1.234);
    std::fs::write(
        ws_root.join("reports/variance.json"),
        serde_json::to_vec_pretty(&rep_json).unwrap(),
    )
    .unwrap();
    assert!(commands::audit::cmd_audit(&ws).is_err(), "tampered report must fail audit");
}

#[test]
fn recipe_pipelines_on_tiny_grids() {
    let dir = tempfile::tempdir().unwrap();
    let ws_root = dir.path().join("ws");
    let mut ws = tiny_workspace(&ws_root);

    // three tiny widths so the parameter law has three points
    let models = r#"[
  { n_layers = 1, d_model = 16, n_heads = 2, n_kv_heads = 2, d_ff = 32, context_len = 32, vocab_size = 257 },
  { n_layers = 1, d_model = 32, n_heads = 2, n_kv_heads = 2, d_ff = 64, context_len = 32, vocab_size = 257 },
  { n_layers = 1, d_model = 48, n_heads = 2, n_kv_heads = 2, d_ff = 96, context_len = 32, vocab_size = 257 },
]"#;
    let recipe_cfg = dir.path().join("recipe.toml");
    std::fs::write(
        &recipe_cfg,
        format!(
            r#"
[recipe]
kind = "regularized"
d = 8000
models = {models}
budget = 60
name = "reg-tiny"

[recipe.axes]
lr = [1e-3, 3e-3]
epochs = [1, 2]
wd = [0.0, 0.1]
"#
        ),
    )
    .unwrap();
    let report =
        commands::recipe::cmd_recipe(&mut ws, &load_config(&recipe_cfg).unwrap()).unwrap();
    assert_eq!(report.points.len(), 3);
    let nlaw = report.fits.iter().find(|f| f.name.contains("nlaw")).expect("parameter law");
    assert_eq!(nlaw.fit.points.len(), 3);
    assert!(ws_root.join("reports/reg-tiny.json").exists());

    // the standard recipe on the same grid cannot beat the regularized one
    let std_cfg = dir.path().join("std.toml");
    std::fs::write(
        &std_cfg,
        format!(
            r#"
[recipe]
kind = "standard"
d = 8000
models = {models}
budget = 60
name = "std-tiny"

[recipe.axes]
lr = [1e-3, 3e-3]
epochs = [1, 2]
wd = [0.0, 0.1]
"#
        ),
    )
    .unwrap();
    let std_report =
        commands::recipe::cmd_recipe(&mut ws, &load_config(&std_cfg).unwrap()).unwrap();
    assert_eq!(std_report.points.len(), 3);

    // joint recipe over members x params at one budget
    let joint_cfg = dir.path().join("joint.toml");
    std::fs::write(
        &joint_cfg,
        format!(
            r#"
[recipe]
kind = "joint"
d = 8000
models = {models}
budget = 60
k_max = 3
name = "joint-tiny"

[recipe.axes]
lr = [1e-3]
epochs = [1, 2]
wd = [0.0, 0.1]
"#
        ),
    )
    .unwrap();
    let joint =
        commands::recipe::cmd_recipe(&mut ws, &load_config(&joint_cfg).unwrap()).unwrap();
    let tiered = joint.tiered.expect("joint recipe produces a tiered fit");
    assert!(tiered.final_asymptote.is_finite());
    assert!(!tiered.nonstandard_order, "tier order is members then params");

    // audit still closes after all recipes
    let audit = commands::audit::cmd_audit(&ws).unwrap();
    assert!(audit.failures.is_empty());
}

#[test]
fn binary_smoke_init_run_audit() {
    let dir = tempfile::tempdir().unwrap();
    let ws_root = dir.path().join("ws");
    let bin = env!("CARGO_BIN_EXE_desklab");

    let out = std::process::Command::new(bin)
        .args(["--workspace", ws_root.to_str().unwrap(), "init", "--sample-tokens", "20000"])
        .args(["--context-len", "32", "--val-windows", "8"])
        .output()
        .unwrap();
    assert!(out.status.success(), "init failed: {}", String::from_utf8_lossy(&out.stderr));

    let cfg = dir.path().join("run.toml");
    std::fs::write(
        &cfg,
        format!(
            r#"
[[run]]
d = 4000
model = {TINY_MODEL_TOML}
lr = 1e-3
epochs = 1
wd = 0.1
"#
        ),
    )
    .unwrap();
    let out = std::process::Command::new(bin)
        .env("DESKLAB_WORKSPACE", ws_root.to_str().unwrap())
        .args(["run", cfg.to_str().unwrap()])
        .output()
        .unwrap();
    assert!(out.status.success(), "run failed: {}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("(trained)"), "{stdout}");

    let out = std::process::Command::new(bin)
        .args(["--workspace", ws_root.to_str().unwrap(), "audit"])
        .output()
        .unwrap();
    assert!(out.status.success());

    // a config typo exits nonzero and names the field
    std::fs::write(&cfg, "[[run]]\nd = 4000\nmodle = \"desk\"\n").unwrap();
    let out = std::process::Command::new(bin)
        .args(["--workspace", ws_root.to_str().unwrap(), "run", cfg.to_str().unwrap()])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("modle"));
}
