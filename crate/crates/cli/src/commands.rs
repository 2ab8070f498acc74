use std::path::Path;

use anyhow::{bail, Context, Result};
use mapspan::checkpoint::Checkpoint;
use mapspan::data::{evaluate, generate_needle_task, read_jsonl, write_jsonl, LengthBins, QAExample};
use mapspan::encoder::Vocabulary;
use mapspan::experiments::{
    convergence, gradcheck_suite, k_sweep, matrix_cost_bench, train_with_dev_until, NeedleSetup,
};
use mapspan::inference::{predict_all, spans_of, SearchConfig, Strategy};
use mapspan::model::Model;
use mapspan::trainer::{train as run_training, TrainExample};

use crate::config::{
    require_path, BenchConfig, BenchKind, EvalConfig, GenConfig, GradcheckConfig, Manifest, TrainRunConfig,
};

fn create_out(out: &Path) -> Result<()> {
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))
}

fn read_data(path: &Path) -> Result<Vec<QAExample>> {
    let data = read_jsonl(path).with_context(|| format!("reading {}", path.display()))?;
    if data.is_empty() {
        bail!("{} holds no examples", path.display());
    }
    Ok(data)
}

fn packed_len(data: &[QAExample]) -> usize {
    data.iter().map(|e| e.question.len() + 1 + e.passage.len()).max().unwrap_or(1)
}

pub fn gen(c: &GenConfig, out: &Path) -> Result<()> {
    let train = c.split(c.num, c.seed);
    let dev = c.split(c.dev_num, c.seed + 1);
    train.validate()?;
    create_out(out)?;
    write_jsonl(&out.join("train.jsonl"), &generate_needle_task(&train)?)?;
    write_jsonl(&out.join("dev.jsonl"), &generate_needle_task(&dev)?)?;
    Manifest::new("gen", c).write(out)?;
    eprintln!("wrote {} train and {} dev examples to {}", c.num, c.dev_num, out.display());
    Ok(())
}

pub fn train(c: &TrainRunConfig, out: &Path) -> Result<()> {
    require_path(&c.train_file, "train_file")?;
    c.training.validate()?;
    let train = read_data(&c.train_file)?;
    let dev = c.dev_file.as_deref().map(read_data).transpose()?;

    let vocab = Vocabulary::from_tokens(train.iter().flat_map(|e| e.passage.iter().chain(&e.question)));
    let max_len = packed_len(&train).max(dev.as_deref().map_or(0, packed_len));
    let model = Model::init(c.model.model_config(vocab.len(), max_len))?;
    let strategy = c.strategy.unwrap_or_else(|| Strategy::default_for(&model));
    strategy.check(&model)?;
    create_out(out)?;
    Manifest::new("train", c).write(out)?;

    let train_ids = TrainExample::encode_all(&train, &vocab)?;
    let (model, log) = match dev {
        Some(dev) => {
            let setup = NeedleSetup {
                train,
                dev,
                vocab: vocab.clone(),
                train_ids,
            };
            let search = SearchConfig::default();
            let (model, log, epochs) = train_with_dev_until(model, &setup, &c.training, strategy, &search, |e| {
                eprintln!(
                    "epoch {:>3}  loss {:.4}  dev EM {:.2}  F1 {:.2}  {:.1}s",
                    e.epoch, e.train_loss, e.dev_em, e.dev_f1, e.wall_s
                );
                false
            })?;
            let report = setup.dev_report(&model, strategy, &search)?;
            report.write_json(&out.join("report.json"))?;
            report.write_bins_csv(&out.join("report_by_length.csv"))?;
            write_epochs(&out.join("epochs.csv"), &epochs)?;
            (model, log)
        }
        None => run_training(model, &train_ids, &c.training)?,
    };
    log.write_csv_file(&out.join("loss.csv"))?;
    if log.clamped > 0 {
        eprintln!("warning: {} target probabilities hit the log floor", log.clamped);
    }
    Checkpoint {
        model,
        vocab,
        train: Some(c.training.clone()),
    }
    .save(&out.join("model.ckpt"))?;
    eprintln!("{} steps; checkpoint at {}", log.records.len(), out.join("model.ckpt").display());
    Ok(())
}

fn write_epochs(path: &Path, epochs: &[mapspan::experiments::EpochReport]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for e in epochs {
        w.serialize(e)?;
    }
    w.flush()?;
    Ok(())
}

pub fn eval(c: &EvalConfig, out: &Path) -> Result<()> {
    require_path(&c.checkpoint, "checkpoint")?;
    require_path(&c.data, "data")?;
    if c.bins == 0 {
        bail!("bins must be at least 1");
    }
    let ck = Checkpoint::load(&c.checkpoint).with_context(|| format!("loading {}", c.checkpoint.display()))?;
    let data = read_data(&c.data)?;
    let strategy = c.strategy.unwrap_or_else(|| Strategy::default_for(&ck.model));
    strategy.check(&ck.model)?;
    let preds = predict_all(&ck.model, &ck.vocab, &data, strategy, &c.search)?;
    let report = evaluate(&spans_of(&preds), &data, &LengthBins::up_to(c.bins))?;
    create_out(out)?;
    Manifest::new("eval", c).write(out)?;
    report.write_json(&out.join("report.json"))?;
    report.write_bins_csv(&out.join("report_by_length.csv"))?;
    std::fs::write(out.join("predictions.json"), serde_json::to_string_pretty(&preds)?)?;
    println!("{strategy:?}: EM {:.2}  F1 {:.2}  ({} examples)", report.em, report.f1, report.count);
    Ok(())
}

/// Prints one row per configuration; `Ok(false)` if any exceeded the
/// tolerance.
pub fn gradcheck(c: &GradcheckConfig, out: Option<&Path>) -> Result<bool> {
    let t = std::time::Instant::now();
    let rows = gradcheck_suite(c.tolerance, c.seed)?;
    let secs = t.elapsed().as_secs_f64();
    println!("{:<26} {:>12} {:>8}  result", "configuration", "max rel err", "coords");
    for r in &rows {
        println!(
            "{:<26} {:>12.3e} {:>8}  {}",
            r.name,
            r.max_relative_error,
            r.coordinates,
            if r.passed { "ok" } else { "FAIL" }
        );
        if let (false, Some(w)) = (r.passed, &r.worst) {
            println!("    worst: {w}");
        }
    }
    let passed = rows.iter().all(|r| r.passed);
    println!("{} of {} passed in {secs:.1}s (tolerance {:e})", rows.iter().filter(|r| r.passed).count(), rows.len(), c.tolerance);
    if let Some(out) = out {
        create_out(out)?;
        Manifest::new("gradcheck", c).write(out)?;
        let report = serde_json::json!({ "passed": passed, "seconds": secs, "rows": rows });
        std::fs::write(out.join("report.json"), serde_json::to_string_pretty(&report)?)?;
    }
    Ok(passed)
}

pub fn bench(c: &BenchConfig, out: &Path) -> Result<()> {
    create_out(out)?;
    Manifest::new("bench", c).write(out)?;
    let needs_task = c.benches.iter().any(|b| *b != BenchKind::Cost);
    let setup = if needs_task {
        Some(NeedleSetup::generate(&c.task.split(c.task.num, c.task.seed), c.task.dev_num)?)
    } else {
        None
    };
    let model_cfg = |setup: &NeedleSetup| c.model.model_config(setup.vocab.len(), setup.max_packed_len());

    for kind in &c.benches {
        match kind {
            BenchKind::Cost => {
                let rows = matrix_cost_bench(&c.cost.ns, c.cost.k, c.cost.d, c.cost.repeats, c.cost.max_full, c.seed)?;
                let mut w = csv::Writer::from_path(out.join("bench_cost.csv"))?;
                w.write_record(["n", "k", "full_cells", "sampled_cells", "full_ms", "sampled_ms", "note"])?;
                for r in &rows {
                    let (full_ms, note) = match r.full_ms {
                        Some(ms) => (format!("{ms:.4}"), String::new()),
                        None => ("".into(), format!("skipped: n > max_full {}", c.cost.max_full)),
                    };
                    w.write_record([
                        r.n.to_string(),
                        r.k.to_string(),
                        r.full_cells.to_string(),
                        r.sampled_cells.to_string(),
                        full_ms,
                        format!("{:.4}", r.sampled_ms),
                        note,
                    ])?;
                    eprintln!(
                        "cost n={:<4} cells {:>7} vs {:<4} time {} vs {:.3} ms",
                        r.n,
                        r.full_cells,
                        r.sampled_cells,
                        r.full_ms.map_or("skipped".into(), |m| format!("{m:.3}")),
                        r.sampled_ms
                    );
                }
                w.flush()?;
            }
            BenchKind::KSweep => {
                let setup = setup.as_ref().expect("task generated");
                let rows = k_sweep(setup, &model_cfg(setup), &c.training, &c.ks)?;
                let mut w = csv::Writer::from_path(out.join("bench_k_sweep.csv"))?;
                for r in &rows {
                    w.serialize(r)?;
                    eprintln!("k={:<3} EM {:.2}  F1 {:.2}  {:.1}s", r.k, r.em, r.f1, r.wall_s);
                }
                w.flush()?;
            }
            BenchKind::Convergence => {
                let full = setup.as_ref().expect("task generated");
                let probe = NeedleSetup {
                    dev: full.dev.iter().take(c.convergence.probe_examples).cloned().collect(),
                    ..full.clone()
                };
                let report = convergence(
                    &probe,
                    &model_cfg(full),
                    &c.training,
                    c.convergence.full_steps,
                    c.convergence.eval_every,
                    c.convergence.tolerance,
                )?;
                let mut w = csv::Writer::from_path(out.join("bench_convergence.csv"))?;
                w.write_record(["step", "full_loss", "sampled_loss"])?;
                for p in &report.curve {
                    w.write_record([
                        p.step.to_string(),
                        p.full.map(|l| format!("{l:.6}")).unwrap_or_default(),
                        format!("{:.6}", p.sampled),
                    ])?;
                }
                w.flush()?;
                std::fs::write(
                    out.join("bench_convergence.json"),
                    serde_json::to_string_pretty(&serde_json::json!({
                        "full_steps": report.full_steps,
                        "full_final": report.full_final,
                        "sampled_steps_to_match": report.sampled_steps_to_match,
                        "tolerance": report.tolerance,
                        "parity": report.parity(),
                    }))?,
                )?;
                eprintln!(
                    "convergence: full final {:.4} after {} steps; sampled matched at {:?}",
                    report.full_final, report.full_steps, report.sampled_steps_to_match
                );
            }
        }
    }
    Ok(())
}
