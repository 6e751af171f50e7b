use crate::{Command, Common, GammaArgs, ModelArgs};
use resinv_core::data::{generate_synthetic, LabeledImage};
use resinv_core::io::{self, RunConfig};
use resinv_core::metrics::{psnr, ssim};
use resinv_core::model::{LatentCode, ResolutionInvariantAe};
use resinv_core::pipeline::{self, ClassifierGrid, EncoderMode, GridData};
use resinv_core::resize::resize_tensor;
use resinv_core::uncertainty::{estimate_gamma_table, mc_superresolve, GammaTable};
use resinv_core::{Error, ImageSample, Result, Spacing, Tensor};
use std::path::{Path, PathBuf};

type Model = ResolutionInvariantAe<f64>;

/// Loads the config, applies `--seed` and writes the resolved copy to `--out`.
fn setup(common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.train.seed = seed;
        cfg.data.seed = seed;
        cfg.classifier.seed = seed;
    }
    std::fs::create_dir_all(&common.out).map_err(|e| Error::io(&common.out, e))?;
    io::write_text(&common.out.join("config.json"), &cfg.to_json())?;
    Ok(cfg)
}

fn corpus(cfg: &RunConfig, n: usize) -> Result<Vec<LabeledImage<f64>>> {
    let mut data = cfg.data.clone();
    data.spacing = cfg.model.highest_train_res;
    generate_synthetic(&data, n)
}

fn images(labeled: Vec<LabeledImage<f64>>) -> Vec<ImageSample<f64>> {
    labeled.into_iter().map(|l| l.image).collect()
}

fn load_model(cfg: &RunConfig, args: &ModelArgs) -> Result<Model> {
    let path = args
        .checkpoint
        .clone()
        .or_else(|| cfg.checkpoint.as_ref().map(PathBuf::from))
        .ok_or_else(|| Error::Config("no checkpoint given (--checkpoint or config key)".into()))?;
    io::load_checkpoint(&path, cfg.model.clone())
}

fn gamma_table(cfg: &RunConfig, args: &GammaArgs) -> Result<GammaTable> {
    let path = args.gamma.clone().or_else(|| cfg.gamma_table.as_ref().map(PathBuf::from));
    match path {
        Some(p) => io::parse_gamma_csv(&io::read_text(&p)?, cfg.model.highest_train_res, cfg.gamma.samples),
        None => estimate(cfg, &cfg.gamma.factors, cfg.gamma.samples),
    }
}

fn estimate(cfg: &RunConfig, factors: &[f64], samples: usize) -> Result<GammaTable> {
    let subset = images(corpus(cfg, samples)?);
    estimate_gamma_table(&subset, factors, resize_tensor)
}

fn read_image(path: &Path, spacing: Spacing) -> Result<ImageSample<f64>> {
    let plane = io::read_pgm(path, (0.0, 1.0))?;
    let (h, w) = (plane.shape()[0], plane.shape()[1]);
    ImageSample::new(plane.reshape(&[1, 1, h, w])?, spacing)
}

fn std_range(std: &Tensor<f64>) -> (f64, f64) {
    let max = std.data().iter().fold(0.0f64, |a, &v| a.max(v));
    (0.0, if max > 0.0 { max } else { 1.0 })
}

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::GenData { common, n } => {
            let cfg = setup(&common)?;
            let data = corpus(&cfg, n.unwrap_or(cfg.n_train))?;
            let mut labels = String::from("index,file,label,spacing_y,spacing_x\n");
            for (i, item) in data.iter().enumerate() {
                let file = format!("img_{i:05}.pgm");
                io::write_pgm(&common.out.join(&file), &item.image.pixels, (0.0, 1.0))?;
                let sp = item.image.spacing;
                labels.push_str(&format!("{i},{file},{},{},{}\n", item.label, sp.y, sp.x));
            }
            io::write_text(&common.out.join("labels.csv"), &labels)
        }
        Command::EstimateGamma {
            common,
            factors,
            samples,
        } => {
            let cfg = setup(&common)?;
            let factors = factors.unwrap_or_else(|| cfg.gamma.factors.clone());
            let table = estimate(&cfg, &factors, samples.unwrap_or(cfg.gamma.samples))?;
            io::write_text(&common.out.join("gamma.csv"), &table.to_csv())
        }
        Command::Train { common, gamma } => {
            let cfg = setup(&common)?;
            let table = gamma_table(&cfg, &gamma)?;
            io::write_text(&common.out.join("gamma.csv"), &table.to_csv())?;
            let data = images(corpus(&cfg, cfg.n_train)?);
            let model = Model::new(cfg.model.clone(), cfg.train.seed)?;
            let every = cfg.train.checkpoint_every;
            let out = common.out.clone();
            let (model, log) = pipeline::train(model, table, &data, cfg.train.clone(), |step, _, m| {
                if every > 0 && step % every == 0 {
                    io::save_checkpoint(&out.join(format!("checkpoint_{step:06}.rtf")), m)?;
                }
                Ok(())
            })?;
            let mut csv = format!("step,{}\n", resinv_core::losses::LossReport::CSV_HEADER);
            for (i, r) in log.iter().enumerate() {
                csv.push_str(&format!("{},{}\n", i + 1, r.csv_row()));
            }
            io::write_text(&common.out.join("loss.csv"), &csv)?;
            io::save_checkpoint(&common.out.join("model.rtf"), &model)
        }
        Command::Encode {
            common,
            model,
            input,
            input_res,
        } => {
            let cfg = setup(&common)?;
            let m = load_model(&cfg, &model)?;
            let dist = m.encode(&read_image(&input, input_res)?)?;
            io::write_rtf(
                &common.out.join("latent.rtf"),
                &[("mu".into(), dist.mu), ("logvar".into(), dist.logvar)],
            )
        }
        Command::Decode {
            common,
            model,
            latent,
            size,
            target_res,
        } => {
            let cfg = setup(&common)?;
            let m = load_model(&cfg, &model)?;
            let entries = io::read_rtf(&latent)?;
            let mu = entries
                .into_iter()
                .find(|(n, _)| n == "mu")
                .map(|(_, t)| t)
                .ok_or_else(|| Error::Format {
                    offset: 0,
                    message: format!("{} has no \"mu\" entry", latent.display()),
                })?;
            let code = LatentCode {
                z: mu,
                source_resolution: m.config.latent_res(),
                gamma_applied: 0.0,
            };
            let out = m.decode(&code, size, target_res)?;
            io::write_pgm(&common.out.join("decoded.pgm"), &out, (0.0, 1.0))?;
            io::write_rtf(&common.out.join("decoded.rtf"), &[("image".into(), out)])
        }
        Command::Superres {
            common,
            model,
            gamma,
            input,
            input_res,
            target_res,
            target_size,
            draws,
        } => {
            let cfg = setup(&common)?;
            let m = load_model(&cfg, &model)?;
            let table = gamma_table(&cfg, &gamma)?;
            let image = read_image(&input, input_res)?;
            let size = target_size.unwrap_or_else(|| {
                let (ey, ex) = image.extent();
                (
                    ((ey / target_res.y).round() as usize).max(1),
                    ((ex / target_res.x).round() as usize).max(1),
                )
            });
            let r = mc_superresolve(&image, &m, &table, size, target_res, draws, cfg.train.seed)?;
            let range = std_range(&r.std_map);
            io::write_pgm(&common.out.join("mean.pgm"), &r.mean_image, (0.0, 1.0))?;
            io::write_pgm(&common.out.join("uncertainty.pgm"), &r.std_map, range)?;
            io::write_rtf(
                &common.out.join("superres.rtf"),
                &[("mean".into(), r.mean_image.clone()), ("std".into(), r.std_map.clone())],
            )?;
            let gamma = resinv_core::uncertainty::lookup_gamma(&table, input_res);
            io::write_text(
                &common.out.join("stats.csv"),
                &format!(
                    "draws,gamma,mean_std,max_std,height,width\n{},{gamma},{},{},{},{}\n",
                    r.n_draws,
                    r.mean_std(),
                    range.1,
                    size.0,
                    size.1
                ),
            )
        }
        Command::EvalSuperres { common, model, gamma } => {
            let cfg = setup(&common)?;
            let m = load_model(&cfg, &model)?;
            let table = gamma_table(&cfg, &gamma)?;
            let mut test_cfg = cfg.clone();
            test_cfg.data.seed = cfg.eval.test_seed;
            let test = images(corpus(&test_cfg, cfg.eval.n_test)?);
            let rows = pipeline::evaluate_superres(&m, &table, &test, &cfg.eval.factors, cfg.eval.draws, cfg.train.seed)?;
            let mut csv = format!("{}\n", pipeline::SuperresRow::CSV_HEADER);
            for r in &rows {
                csv.push_str(&r.csv_row());
                csv.push('\n');
            }
            io::write_text(&common.out.join("superres.csv"), &csv)
        }
        Command::Classify {
            common,
            model,
            fixed_factor,
        } => {
            let cfg = setup(&common)?;
            let m = load_model(&cfg, &model)?;
            let train = corpus(&cfg, cfg.n_train)?;
            let mut test_cfg = cfg.clone();
            test_cfg.data.seed = cfg.eval.test_seed;
            let test = corpus(&test_cfg, cfg.eval.n_test)?;
            let split = |d: &[LabeledImage<f64>]| -> Result<(Vec<ImageSample<f64>>, Vec<ImageSample<f64>>, Vec<usize>)> {
                let hr: Vec<_> = d.iter().map(|l| l.image.clone()).collect();
                let lr = hr
                    .iter()
                    .map(|i| resinv_core::data::degrade(i, cfg.classifier_lr_factor))
                    .collect::<Result<_>>()?;
                Ok((hr, lr, d.iter().map(|l| l.label).collect()))
            };
            let (train_hr, train_lr, train_labels) = split(&train)?;
            let (test_hr, test_lr, test_labels) = split(&test)?;
            let data = GridData {
                train_hr: &train_hr,
                train_lr: &train_lr,
                train_labels: &train_labels,
                test_hr: &test_hr,
                test_lr: &test_lr,
                test_labels: &test_labels,
            };
            let mode = if fixed_factor { EncoderMode::FixedFactor } else { EncoderMode::Planned };
            let grid: ClassifierGrid = pipeline::classifier_grid(&m, mode, &data, &cfg.classifier)?;
            io::write_text(&common.out.join("classifier_grid.csv"), &grid.to_csv())
        }
        Command::Metrics { common, a, b } => {
            setup(&common)?;
            let (x, y) = (io::read_pgm(&a, (0.0, 1.0))?, io::read_pgm(&b, (0.0, 1.0))?);
            let p = psnr(&x, &y, 1.0)?;
            let s = ssim(&x, &y, 1.0)?;
            io::write_text(&common.out.join("metrics.csv"), &format!("psnr_db,ssim\n{p},{s}\n"))
        }
    }
}
