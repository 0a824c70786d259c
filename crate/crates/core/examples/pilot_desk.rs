//! Desk-scale pilot: epoch sweep on the standard corpus to check the
//! overfitting shape, plus ensemble and distillation deltas at a smaller
//! budget. Prints timings used to size the test suite.

use desklab_core::corpus::sample_text;
use desklab_core::distill::{distill_train, train_on_synthetic_only, DistillSpec, SamplingMode};
use desklab_core::ensemble::{ensemble_eval, EnsembleSpec};
use desklab_core::model::{derive_seed, ModelConfig};
use desklab_core::trainer::Hyper;
use desklab_core::workspace::{Workspace, WorkspaceConfig};
use std::time::Instant;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let which = args.get(1).map(|s| s.as_str()).unwrap_or("all");
    let dir = tempfile::tempdir().unwrap();
    let config = WorkspaceConfig::default();
    let d_main = 250_000u64;
    let text = sample_text(7, d_main as usize + 64 * 64 + 1024);
    let t0 = Instant::now();
    let mut ws = Workspace::create(dir.path(), text.as_bytes(), config).unwrap();
    println!("workspace ready in {:.1}s ({} train tokens)", t0.elapsed().as_secs_f64(), ws.master_tokens());
    let desk = ModelConfig::desk();

    if which == "all" || which == "overfit" {
        let lr: f64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(1e-3);
        println!("== epoch sweep at d={d_main}, wd=0.1, lr={lr} ==");
        for &epochs in &[1u32, 2, 4, 8, 16, 32, 64] {
            let t = Instant::now();
            let hyper = Hyper { peak_lr: lr, epochs, weight_decay: 0.1, batch_size: 16 };
            let spec = ws.run_spec(d_main, desk.clone(), hyper, 1, 2, "overfit").unwrap();
            let rec = ws.train(&spec).unwrap();
            println!(
                "epochs={epochs:2} val={:.5} train={:.5}  [{:.0}s]",
                rec.final_val_loss.unwrap(),
                rec.final_train_loss.unwrap(),
                t.elapsed().as_secs_f64()
            );
        }
    }

    if which == "all" || which == "ensemble" {
        let d = 64_000u64;
        println!("== K=4 ensemble at d={d}, 8 epochs ==");
        let hyper = Hyper { peak_lr: 1e-3, epochs: 8, weight_decay: 0.1, batch_size: 16 };
        let t = Instant::now();
        let mut keys = Vec::new();
        let mut losses = Vec::new();
        for m in 0..4u64 {
            let spec = ws
                .run_spec(d, desk.clone(), hyper.clone(), derive_seed(50, 2 * m), derive_seed(50, 2 * m + 1), "ens")
                .unwrap();
            let rec = ws.train(&spec).unwrap();
            losses.push(rec.final_val_loss.unwrap());
            keys.push(rec.ledger_key);
        }
        let mean = losses.iter().sum::<f64>() / 4.0;
        for k in 1..=4 {
            let spec = EnsembleSpec::new(keys[..k].to_vec(), desk.clone());
            let rec = ensemble_eval(&mut ws, &spec).unwrap();
            println!("K={k} val={:.5} (mean member {:.5})", rec.val_loss, mean);
        }
        println!("members+evals took {:.0}s", t.elapsed().as_secs_f64());
    }

    if which == "all" || which == "distill" {
        let d = 64_000u64;
        println!("== distillation at d={d} ==");
        let t = Instant::now();
        let teach_hyper = Hyper { peak_lr: 1e-3, epochs: 8, weight_decay: 0.1, batch_size: 16 };
        let tspec = ws.run_spec(d, desk.clone(), teach_hyper, 60, 61, "teacher").unwrap();
        let teacher_rec = ws.train(&tspec).unwrap();
        println!("teacher val={:.5} [{:.0}s]", teacher_rec.final_val_loss.unwrap(), t.elapsed().as_secs_f64());
        let teacher = EnsembleSpec::new(vec![teacher_rec.ledger_key.clone()], desk.clone());
        let dspec = DistillSpec {
            teacher,
            synth_tokens: 2 * 8 * d + 64 * 64, // enough for the no-mix arm
            mixing_ratio: (1, 1),
            student_config: desk.clone(),
            student_hyper: Hyper { peak_lr: 1e-3, epochs: 8, weight_decay: 0.1, batch_size: 16 },
            temperature: 1.0,
            sample_seed: 70,
            member_sampling_mode: SamplingMode::IndividualMembers,
            synth_epoch_cap: 3,
            d_tokens: d,
            init_seed: 71,
            data_seed: 72,
        };
        let t = Instant::now();
        let mixed = distill_train(&mut ws, &dspec).unwrap();
        println!(
            "mixed student val={:.5} tokens={} [{:.0}s]",
            mixed.final_val_loss.unwrap(),
            mixed.tokens_seen,
            t.elapsed().as_secs_f64()
        );
        let t = Instant::now();
        let control = train_on_synthetic_only(&mut ws, &dspec, mixed.tokens_seen).unwrap();
        println!(
            "no-mix student val={:.5} tokens={} [{:.0}s]",
            control.final_val_loss.unwrap(),
            control.tokens_seen,
            t.elapsed().as_secs_f64()
        );
    }
    println!("total {:.0}s", t0.elapsed().as_secs_f64());
}
