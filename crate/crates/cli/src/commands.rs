use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use log::info;
use topodesc_core::autodiff::{
    grad_check, read_checkpoint, tiny_problem, write_checkpoint, GradCheckOptions, Real,
};
use topodesc_core::config::{Precision, RunConfig};
use topodesc_core::data::{generate, DatasetFile};
use topodesc_core::inspect::{inspect_batch, inspect_csv};
use topodesc_core::loss::{LambdaMode, LossConfig};
use topodesc_core::train::{draw_batch, evaluate_held_out, log_to_csv, train, TrainLogRow};

use crate::args::{EvalArgs, GenerateArgs, GradcheckArgs, InspectArgs, TrainArgs};
use crate::exit::{Exit, CHECK_FAILED, IO, USAGE};

pub fn generate_cmd(args: &GenerateArgs) -> Result<()> {
    let data = generate(
        args.seed,
        args.scenes,
        args.dim,
        args.noise,
        args.distortion,
    )?;
    data.write(&args.out)
        .map_err(|e| Exit::new(USAGE, format!("cannot write dataset: {e}")))?;
    let h = &data.header;
    println!(
        "wrote {}: {} scenes, dim {}, seed {}, noise {}, distortion {}",
        args.out.display(),
        h.scenes,
        h.dim,
        h.seed,
        h.noise,
        h.distortion
    );
    Ok(())
}

/// Preset, then config file, then flags.
fn effective_config(args: &TrainArgs) -> Result<RunConfig> {
    let mut cfg = RunConfig::preset(&args.preset)?;
    if let Some(path) = &args.config {
        let text = fs::read_to_string(path)
            .with_context(|| format!("cannot read config {}", path.display()))
            .map_err(|e| Exit::new(IO, format!("{e:#}")))?;
        cfg.apply_text(&text)?;
    }
    for kv in &args.overrides {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Exit::new(USAGE, format!("--set expects KEY=VALUE, got {kv:?}")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    if let Some(v) = &args.dataset {
        cfg.dataset = Some(v.clone());
    }
    if let Some(v) = &args.out_dir {
        cfg.out_dir = Some(v.clone());
    }
    if let Some(v) = args.lambda_mode {
        cfg.loss.lambda_mode = v;
    }
    if let Some(v) = args.topology {
        cfg.loss.topology = v;
    }
    if let Some(v) = args.workers {
        cfg.workers = v;
    }
    if let Some(v) = args.seed {
        cfg.seed = v;
    }
    if let Some(v) = args.iterations {
        cfg.iterations = v;
    }
    if let Some(v) = args.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = args.k {
        cfg.loss.k = v;
    }
    if let Some(v) = args.precision {
        cfg.precision = v;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run_training<T: Real>(cfg: &RunConfig, data: &DatasetFile, out_dir: &Path) -> Result<()> {
    let every = (cfg.iterations / 20).max(1);
    let outcome = train::<T>(cfg, data, |row: &TrainLogRow| {
        if row.iteration.is_multiple_of(every) || row.iteration + 1 == cfg.iterations {
            info!(
                "iter {:>7}  lambda {:.3}  loss {:.6}  d_E+ {:.4}  d_T+ {:.4}  d- {:.4}  active {}",
                row.iteration,
                row.lambda,
                row.loss,
                row.mean_d_pos_euclid,
                row.mean_d_pos_topo,
                row.mean_d_neg,
                row.active_triplets
            );
        }
    })?;
    let log_path = out_dir.join("train_log.csv");
    fs::write(&log_path, log_to_csv(&outcome.log))
        .with_context(|| format!("cannot write {}", log_path.display()))?;
    let ckpt = out_dir.join("checkpoint.tpd");
    write_checkpoint(&ckpt, &outcome.net)?;
    if let (Some(first), Some(last)) = (outcome.log.first(), outcome.log.last()) {
        println!(
            "trained {} iterations: loss {} -> {}, d_T {} -> {}",
            cfg.iterations, first.loss, last.loss, first.mean_d_pos_topo, last.mean_d_pos_topo
        );
    }
    println!("checkpoint {}", ckpt.display());
    println!("log {}", log_path.display());
    Ok(())
}

pub fn train_cmd(args: &TrainArgs) -> Result<()> {
    let cfg = effective_config(args)?;
    let Some(dataset) = cfg.dataset.clone() else {
        bail!(Exit::new(
            USAGE,
            "no dataset given (--dataset or `dataset =` in the config)"
        ));
    };
    let out_dir = cfg.out_dir.clone().unwrap_or_else(|| PathBuf::from("."));
    let data = DatasetFile::read(&dataset)?;
    fs::create_dir_all(&out_dir)
        .with_context(|| format!("cannot create {}", out_dir.display()))
        .map_err(|e| Exit::new(IO, format!("{e:#}")))?;
    let echo = out_dir.join("config.txt");
    fs::write(&echo, cfg.to_text())
        .with_context(|| format!("cannot write {}", echo.display()))
        .map_err(|e| Exit::new(IO, format!("{e:#}")))?;
    info!("effective config:\n{}", cfg.to_text());
    match cfg.precision {
        Precision::Single => run_training::<f32>(&cfg, &data, &out_dir),
        Precision::Double => run_training::<f64>(&cfg, &data, &out_dir),
    }
}

fn load_pair(
    checkpoint: &Path,
    dataset: &Path,
) -> Result<(topodesc_core::autodiff::EmbeddingNet<f64>, DatasetFile)> {
    let net = read_checkpoint(checkpoint)?;
    let data = DatasetFile::read(dataset)?;
    if net.input_dim() != data.dim() {
        bail!(Exit::new(
            IO,
            format!(
                "checkpoint expects patches of dimension {} but the dataset has {}",
                net.input_dim(),
                data.dim()
            )
        ));
    }
    Ok((net, data))
}

pub fn eval_cmd(args: &EvalArgs) -> Result<()> {
    let (net, data) = load_pair(&args.checkpoint, &args.dataset)?;
    let r = evaluate_held_out(&net, &data, args.holdout, args.negatives, args.seed)?;
    println!("fpr95 {}", r.fpr95);
    println!("map {}", r.map);
    println!("n_pos {}", r.n_pos);
    println!("n_neg {}", r.n_neg);
    if let Some(out) = &args.out {
        let csv = format!(
            "fpr95,map,n_pos,n_neg\n{},{},{},{}\n",
            r.fpr95, r.map, r.n_pos, r.n_neg
        );
        fs::write(out, csv)
            .with_context(|| format!("cannot write {}", out.display()))
            .map_err(|e| Exit::new(IO, format!("{e:#}")))?;
    }
    Ok(())
}

pub fn inspect_cmd(args: &InspectArgs) -> Result<()> {
    let (net, data) = load_pair(&args.checkpoint, &args.dataset)?;
    let batch = draw_batch(&data.pairs, args.batch_size, args.seed)?;
    let a = net.embed(&batch.anchors)?;
    let p = net.embed(&batch.positives)?;
    let rows = inspect_batch(&a, &p, &batch.scene_ids, args.k, args.lle_eps)?;
    for r in &rows {
        println!("{r}");
    }
    let flagged = rows.iter().filter(|r| r.exceeds_one()).count();
    println!("{} pairs, {flagged} with d_T > 1", rows.len());
    if let Some(path) = &args.csv {
        fs::write(path, inspect_csv(&rows))
            .with_context(|| format!("cannot write {}", path.display()))
            .map_err(|e| Exit::new(IO, format!("{e:#}")))?;
    }
    Ok(())
}

pub fn gradcheck_cmd(args: &GradcheckArgs) -> Result<()> {
    let loss = LossConfig {
        k: args.k,
        topology: args.mode,
        lambda_mode: LambdaMode::Fixed(args.lambda),
        ..LossConfig::default()
    };
    let (net, a, p) = tiny_problem(args.seed, &[8, 8, 4], 6)?;
    let opts = GradCheckOptions {
        step: args.step,
        seed: args.seed,
        fault: args.inject_fault,
        ..GradCheckOptions::default()
    };
    let r = grad_check(&net, &a, &p, &loss, &opts)?;
    println!(
        "mode {} lambda {} checked {} parameters, step {}",
        args.mode, args.lambda, r.checked, r.step_size
    );
    println!(
        "max relative error {:e} at {} (tolerance {:e})",
        r.max_relative_error, r.worst_parameter, args.tol
    );
    // NaN fails the check.
    if r.max_relative_error.is_nan() || r.max_relative_error >= args.tol {
        bail!(Exit::new(
            CHECK_FAILED,
            format!(
                "gradient check failed: {:e} at {} exceeds {:e}",
                r.max_relative_error, r.worst_parameter, args.tol
            )
        ));
    }
    println!("ok");
    Ok(())
}
