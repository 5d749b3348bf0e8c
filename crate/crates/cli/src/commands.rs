use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use srn_core::config::parse_config;
use srn_core::data::{generate_synthetic_dataset, read_image, write_image, Dataset, Split};
use srn_core::init::Rng;
use srn_core::metrics::{psnr, ssim};
use srn_core::model::{count_params, param_breakdown, Srn, SrnConfig, Variant};
use srn_core::train::{load_checkpoint, run_training, Trainer};
use srn_core::verify::{
    run_gradcheck_case, run_gradcheck_suite, GRADCHECK_EPS, GRADCHECK_TOLERANCE,
};
use srn_core::Error;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] Error),
    #[error("{failed} of {total} gradient checks failed")]
    GradCheck { failed: usize, total: usize },
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::GradCheck { .. } => 3,
            CliError::Core(e) => match e {
                Error::Config(_) | Error::UnknownVariant(_) => 1,
                Error::NonFinite(_) => 3,
                _ => 2,
            },
        }
    }
}

fn read_text(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| {
        CliError::Core(Error::Io {
            path: path.to_path_buf(),
            source: e,
        })
    })
}

pub fn synth(out: &Path, count: usize, size: (usize, usize), seed: u64) -> Result<(), CliError> {
    if count == 0 {
        return Err(CliError::Usage("--count must be at least 1".into()));
    }
    let data = generate_synthetic_dataset(count, size, &mut Rng::new(seed))?;
    data.save(out)?;
    let mean = |d: &Dataset| -> Result<f64, Error> {
        let total = d
            .pairs()
            .iter()
            .map(|p| psnr(&p.blurry, &p.sharp))
            .sum::<Result<f64, _>>()?;
        Ok(total / d.len().max(1) as f64)
    };
    println!(
        "wrote {} train and {} eval pairs of {}x{} to {}",
        data.train.len(),
        data.eval.len(),
        size.0,
        size.1,
        out.display()
    );
    println!(
        "mean blurry PSNR: train {:.2} dB, eval {:.2} dB",
        mean(&data.train)?,
        mean(&data.eval)?
    );
    Ok(())
}

pub fn train(
    data: &Path,
    config: &Path,
    out: &Path,
    resume: Option<&Path>,
) -> Result<(), CliError> {
    let (model, cfg) = parse_config(&read_text(config)?)?;
    let dataset = Dataset::load(data, Split::Train)?;
    let mut trainer = match resume {
        Some(path) => {
            let ckpt = load_checkpoint(path)?;
            if ckpt.model != model || ckpt.train != cfg {
                return Err(CliError::Usage(format!(
                    "{} was trained with a different configuration than {}",
                    path.display(),
                    config.display()
                )));
            }
            Trainer::from_checkpoint(ckpt)?
        }
        None => Trainer::new(model, cfg)?,
    };
    let spe = trainer.steps_per_epoch(dataset.len());
    println!(
        "training {} on {} pairs: {} steps per epoch, {} steps total, starting at step {}",
        model.variant,
        dataset.len(),
        spe,
        trainer.total_steps(dataset.len()),
        trainer.step_count()
    );
    let mut epoch_loss = 0.0;
    let mut epoch_steps = 0u64;
    let ckpt = run_training(&mut trainer, &dataset, Some(out), |r| {
        epoch_loss += r.loss;
        epoch_steps += 1;
        if r.step % spe == 0 {
            println!(
                "epoch {:5} step {:7} loss {:.6} lr {:.3e}",
                r.step / spe,
                r.step,
                epoch_loss / epoch_steps as f64,
                r.lr
            );
            epoch_loss = 0.0;
            epoch_steps = 0;
        }
    })?;
    println!(
        "finished at step {} (epoch {}); checkpoints in {}",
        ckpt.step,
        ckpt.epoch,
        out.display()
    );
    Ok(())
}

fn load_model(ckpt: &Path) -> Result<(Srn, srn_core::model::ModelWeights<f32>), CliError> {
    let ckpt = load_checkpoint(ckpt)?;
    let srn = Srn::new(ckpt.model)?;
    srn.check_weights(&ckpt.weights)?;
    Ok((srn, ckpt.weights))
}

pub fn infer(ckpt: &Path, input: &Path, output: &Path) -> Result<(), CliError> {
    let (srn, weights) = load_model(ckpt)?;
    let blurry = read_image(input)?;
    let restored = srn.restore_padded(&weights, &blurry)?;
    write_image(&restored, output)?;
    println!("wrote {}", output.display());
    Ok(())
}

pub fn eval(ckpt: &Path, data: &Path, split: &str, csv: Option<&Path>) -> Result<(), CliError> {
    let split: Split = split
        .parse()
        .map_err(|e: Error| CliError::Usage(e.to_string()))?;
    let (srn, weights) = load_model(ckpt)?;
    let dataset = Dataset::load(data, split)?;
    if dataset.is_empty() {
        return Err(CliError::Core(Error::Config(format!(
            "no pairs under {}",
            data.display()
        ))));
    }
    let mut rows = Vec::with_capacity(dataset.len());
    println!(
        "{:<12} {:>10} {:>10} {:>10}",
        "id", "blur_db", "psnr_db", "ssim"
    );
    for pair in dataset.pairs() {
        let restored = srn.restore_padded(&weights, &pair.blurry)?;
        let p = psnr(&restored, &pair.sharp)?;
        let s = ssim(&restored, &pair.sharp)?;
        println!(
            "{:<12} {:>10.4} {:>10.4} {:>10.6}",
            pair.id,
            psnr(&pair.blurry, &pair.sharp)?,
            p,
            s
        );
        rows.push((pair.id.clone(), p, s));
    }
    let n = rows.len() as f64;
    let mean_p = rows.iter().map(|r| r.1).sum::<f64>() / n;
    let mean_s = rows.iter().map(|r| r.2).sum::<f64>() / n;
    println!(
        "{:<12} {:>10} {:>10.4} {:>10.6}",
        "mean", "", mean_p, mean_s
    );
    if let Some(path) = csv {
        let mut text = String::from("id,psnr_db,ssim\n");
        for (id, p, s) in &rows {
            let _ = writeln!(text, "{id},{p:.6},{s:.6}");
        }
        let _ = writeln!(text, "mean,{mean_p:.6},{mean_s:.6}");
        fs::write(path, text).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
    }
    Ok(())
}

pub fn gradcheck(module: Option<&str>) -> Result<(), CliError> {
    let outcomes = match module {
        Some(name) => vec![run_gradcheck_case(name).map_err(|e| match e {
            Error::InvalidArgument { reason, .. } => CliError::Usage(reason),
            other => other.into(),
        })?],
        None => run_gradcheck_suite()?,
    };
    println!("finite differences: eps {GRADCHECK_EPS:e}, tolerance {GRADCHECK_TOLERANCE:e}, f64");
    let mut failed = 0;
    for o in &outcomes {
        let verdict = if o.passed() { "PASS" } else { "FAIL" };
        let worst = o
            .report
            .worst
            .as_ref()
            .map(|(n, i)| format!("{n}[{i}]"))
            .unwrap_or_default();
        println!(
            "{:<18} max_rel_error {:.3e} over {:5} coords  {verdict}  {worst}",
            o.name, o.report.max_rel_error, o.report.coordinates
        );
        failed += usize::from(!o.passed());
    }
    if failed > 0 {
        return Err(CliError::GradCheck {
            failed,
            total: outcomes.len(),
        });
    }
    Ok(())
}

pub fn params(variant: &str, kernel: usize, base_channels: Option<usize>) -> Result<(), CliError> {
    let variant: Variant = variant.parse()?;
    let mut cfg = SrnConfig::new(variant).with_kernel(kernel);
    if let Some(b) = base_channels {
        cfg = cfg.with_base_channels(b);
    }
    let total = count_params(&cfg)?;
    println!(
        "{} (kernel {kernel}, base {}): {:.2}M params ({total})",
        variant.table_label(),
        cfg.base_channels,
        total as f64 / 1e6
    );
    for (block, count) in param_breakdown(&cfg)? {
        println!("  {block:<16} {count:>10}");
    }
    Ok(())
}
