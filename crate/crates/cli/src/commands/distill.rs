//! Sequence-level distillation: generate teacher tokens, train the student
//! on the mixture, and optionally the token-matched no-mixing control.

use crate::config::{parse_sampling_mode, DistillSection, ExperimentConfig};
use anyhow::{anyhow, Result};
use desklab_core::distill::{distill_train, train_on_synthetic_only, DistillSpec};
use desklab_core::ensemble::EnsembleSpec;
use desklab_core::ledger::{RunRecord, RunStatus};
use desklab_core::workspace::Workspace;

pub fn build_spec(ws: &Workspace, section: &DistillSection) -> Result<DistillSpec> {
    let first = ws
        .ledger
        .get_run(&section.teacher_keys[0])
        .ok_or_else(|| anyhow!("teacher key {} not in ledger", section.teacher_keys[0]))?;
    let teacher = EnsembleSpec::new(section.teacher_keys.clone(), first.config.clone());
    Ok(DistillSpec {
        teacher,
        synth_tokens: section.synth_tokens,
        mixing_ratio: section.ratio,
        student_config: section.student_model.resolve()?,
        student_hyper: section.student.resolve(ws.config.default_batch),
        temperature: section.temperature,
        sample_seed: section.sample_seed,
        member_sampling_mode: parse_sampling_mode(&section.mode)?,
        synth_epoch_cap: section.synth_epoch_cap,
        d_tokens: section.d,
        init_seed: section.init_seed,
        data_seed: section.data_seed,
    })
}

fn print_run(label: &str, rec: &RunRecord) {
    match rec.status {
        RunStatus::Ok => println!(
            "{label}: val={:.6} tokens={} key={}",
            rec.final_val_loss.unwrap(),
            rec.tokens_seen,
            rec.ledger_key
        ),
        RunStatus::Failed => println!(
            "{label}: FAILED at step {} key={}",
            rec.failed_step.unwrap_or(0),
            rec.ledger_key
        ),
    }
}

pub fn cmd_distill(
    ws: &mut Workspace,
    cfg: &ExperimentConfig,
) -> Result<(RunRecord, Option<RunRecord>)> {
    let section =
        cfg.distill.as_ref().ok_or_else(|| anyhow!("config has no [distill] section"))?;
    let spec = build_spec(ws, section)?;
    let mixed = distill_train(ws, &spec)?;
    print_run("mixed student", &mixed);

    let control = if section.no_mix_control {
        let rec = train_on_synthetic_only(ws, &spec, mixed.tokens_seen)?;
        print_run("no-mix control", &rec);
        if let (Some(a), Some(b)) = (mixed.final_val_loss, rec.final_val_loss) {
            println!(
                "mixing delta: {:.6} nats ({})",
                b - a,
                if a < b { "mixing wins" } else { "no-mixing wins" }
            );
        }
        Some(rec)
    } else {
        None
    };
    Ok((mixed, control))
}
