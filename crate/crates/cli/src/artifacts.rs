//! Output directory layout of a run.
//!
//! ```text
//! config.toml            snapshot, sufficient to reproduce the run with its seed
//! train_log.jsonl        one evaluation record per line
//! train_log.csv          the same series for plotting
//! checkpoint.bin         final trainer state
//! eval_report.{json,csv} trajectory metrics
//! eval_violations.csv    constraint violations per episode
//! feasibility_map.csv    one row per oracle cell
//! feasibility_heatmap.csv the map projected onto (d, ḋ)
//! ```

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use serde_json::json;

use sislab::env::{EnvState, PointEnv};
use sislab::safety_index::SafetyIndexParams;
use sislab::trainer::{EvalRecord, Trainer};
use sislab::verify::{self, EvalReport};
use sislab::{Checkpoint, Result, RunConfig};

fn meta(hash: &str, seed: u64) -> String {
    format!("config_hash={hash} seed={seed}")
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

fn csv_row(r: &EvalRecord) -> String {
    format!(
        "{},{},{},{},{},{},{},{},{},{},{},{},{}",
        r.env_step,
        r.grad_step,
        r.return_mean,
        r.return_std,
        r.cost_sum,
        r.violation_mean,
        r.sigma,
        r.n,
        r.k,
        r.lambda_mean,
        r.lambda_hot,
        r.alpha,
        r.losses.q_phi
    )
}

pub fn train_run(cfg: &RunConfig, seed: u64, out: &Path) -> Result<()> {
    fs::create_dir_all(out)?;
    let hash = cfg.hash();
    let tag = meta(&hash, seed);
    fs::write(out.join("config.toml"), format!("# {tag}\n{}", cfg.to_toml()))?;

    let env = PointEnv::new(cfg.env.clone())?;
    let mut trainer = Trainer::new(cfg.trainer.clone(), env, &cfg.networks, cfg.initial_index()?, seed)?;
    let mut jsonl = create(out, "train_log.jsonl")?;
    let mut csv = if cfg.logging.csv {
        let mut w = create(out, "train_log.csv")?;
        writeln!(w, "# {tag}")?;
        writeln!(
            w,
            "env_step,grad_step,return_mean,return_std,cost_sum,violation_mean,sigma,n,k,lambda_mean,lambda_hot,alpha,q_phi_loss"
        )?;
        Some(w)
    } else {
        None
    };
    let mut io_err = None;
    let progress = cfg.logging.progress;
    let result = trainer.train_with(cfg.trainer.total_steps, |r| {
        let mut line = json!({"config_hash": hash, "seed": seed});
        if let (Some(m), serde_json::Value::Object(rec)) = (line.as_object_mut(), serde_json::to_value(r).expect("record")) {
            m.extend(rec);
        }
        let mut write = || -> std::io::Result<()> {
            writeln!(jsonl, "{line}")?;
            if let Some(w) = csv.as_mut() {
                writeln!(w, "{}", csv_row(r))?;
            }
            Ok(())
        };
        if let Err(e) = write() {
            io_err.get_or_insert(e);
        }
        if progress {
            eprintln!(
                "step {:>8}  return {:>9.3}  cost {:>4}  violations {:>6.2}  zeta ({:.4}, {:.4}, {:.4})  lambda {:.3}",
                r.env_step, r.return_mean, r.cost_sum, r.violation_mean, r.sigma, r.n, r.k, r.lambda_mean
            );
        }
    });
    if let Some(e) = io_err {
        return Err(e.into());
    }
    jsonl.flush()?;
    if let Some(w) = csv.as_mut() {
        w.flush()?;
    }
    // Always leave a checkpoint behind, even when training aborted.
    Checkpoint::from_trainer(cfg, &trainer).save(&out.join("checkpoint.bin"))?;
    result.map(|_| ())
}

pub fn eval_run(ck: &Checkpoint, n: usize, seed: u64, out: &Path) -> Result<EvalReport> {
    fs::create_dir_all(out)?;
    let env = PointEnv::new(ck.config.env.clone())?;
    let nets = &ck.nets;
    let outcome = verify::eval_trajectories(
        |o| nets.greedy_action(o),
        &ck.zeta,
        &env,
        n,
        seed,
        &ck.config.verify.grid.actions(),
    )?;
    let r = outcome.report;
    let tag = meta(&ck.config_hash, ck.seed);
    let mut w = create(out, "eval_report.csv")?;
    writeln!(w, "# {tag} eval_seed={seed}")?;
    writeln!(w, "trajectories,success_rate,phi0_violation_rate,infeasible_rate,avg_tracking_error")?;
    writeln!(
        w,
        "{},{:.4},{:.4},{:.4},{:.4}",
        r.trajectories, r.success_rate, r.phi0_violation_rate, r.infeasible_rate, r.avg_tracking_error
    )?;
    w.flush()?;
    let doc = json!({
        "config_hash": ck.config_hash,
        "seed": ck.seed,
        "eval_seed": seed,
        "zeta": {"sigma": ck.zeta.sigma, "n": ck.zeta.n, "k": ck.zeta.k},
        "report": r,
    });
    fs::write(out.join("eval_report.json"), format!("{doc:#}\n"))?;
    let mut v = create(out, "eval_violations.csv")?;
    writeln!(v, "# {tag} eval_seed={seed}")?;
    writeln!(v, "episode,violations")?;
    for (i, c) in outcome.violations.per_episode.iter().enumerate() {
        writeln!(v, "{i},{c}")?;
    }
    v.flush()?;
    Ok(r)
}

pub fn verify_run(
    cfg: &RunConfig,
    zeta: &SafetyIndexParams,
    envelope: Option<&[EnvState]>,
    seed: u64,
    out: &Path,
) -> Result<String> {
    fs::create_dir_all(out)?;
    let env = PointEnv::new(cfg.env.clone())?;
    let map = verify::feasibility_grid(zeta, &env, &cfg.verify.grid)?;
    let tag = format!(
        "{} sigma={} n={} k={} eta_d={}",
        meta(&cfg.hash(), seed),
        zeta.sigma,
        zeta.n,
        zeta.k,
        zeta.eta_d
    );
    let mut w = create(out, "feasibility_map.csv")?;
    map.write_csv(&mut w, &tag)?;
    w.flush()?;
    let mut w = create(out, "feasibility_heatmap.csv")?;
    map.projection().write_csv(&mut w, &tag)?;
    w.flush()?;
    let live = map.cells.iter().filter(|c| !c.degenerate).count();
    let mut summary = format!(
        "infeasible_cells={} of {} ({:.4})",
        map.infeasible_count(),
        live,
        map.infeasible_rate()
    );
    if let Some(states) = envelope {
        let cells = map.envelope(states);
        summary.push_str(&format!(
            " envelope_cells={} envelope_infeasible={}",
            cells.len(),
            map.infeasible_within(&cells)
        ));
    }
    Ok(summary)
}
