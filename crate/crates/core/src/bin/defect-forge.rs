use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use image::{Rgb, RgbImage};

use defect_forge::config::Config;
use defect_forge::data::{generate_synthetic, load_dataset, read_rgb, write_rgb, write_synthetic_dataset, Layout, Split, SyntheticSpec};
use defect_forge::eval::{evaluate, scale_sweep};
use defect_forge::geometry::BBox;
use defect_forge::pipeline::{InspectionResult, Pipeline, StageSet};
use defect_forge::{Error, Result};

#[derive(Parser)]
#[command(name = "defect-forge", version, about = "Two-stage surface defect inspection")]
struct Cli {
    /// Override the RNG seed of the spec or config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum StageArg {
    #[value(name = "1")]
    One,
    #[value(name = "2")]
    Two,
    Both,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset.
    Synth {
        /// `key = value` generator spec; defaults apply when omitted.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        count: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one or both stages and write a checkpoint.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "synthetic")]
        layout: Layout,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "both")]
        stage: StageArg,
        /// Start from this checkpoint instead of fresh weights.
        #[arg(long)]
        init: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Inspect one image; writes `<name>.json` and `<name>_overlay.png`.
    Inspect {
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Run stage 2 on every patch.
        #[arg(long)]
        skip_stage1: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint on the test split; writes `report.json` and
    /// `report.txt`, plus `sweep.json` and `sweep.txt` with `--sweep`.
    Eval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "synthetic")]
        layout: Layout,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        skip_stage1: bool,
        /// Also retrain on 30%, 60% and 100% of the training split.
        #[arg(long)]
        sweep: bool,
        #[arg(long)]
        out: PathBuf,
    },
}

fn configure_threads() -> Result<()> {
    if let Ok(v) = std::env::var("DEFECT_FORGE_THREADS") {
        let n: usize = v
            .parse()
            .map_err(|_| Error::invalid(format!("DEFECT_FORGE_THREADS must be a positive integer, got `{v}`")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::invalid(e.to_string()))?;
    }
    Ok(())
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}

fn outline(img: &mut RgbImage, b: &BBox, color: Rgb<u8>) {
    let (w, h) = (img.width() as i64, img.height() as i64);
    let x0 = (b.x_min.floor() as i64).clamp(0, w - 1);
    let y0 = (b.y_min.floor() as i64).clamp(0, h - 1);
    let x1 = (b.x_max.ceil() as i64 - 1).clamp(0, w - 1);
    let y1 = (b.y_max.ceil() as i64 - 1).clamp(0, h - 1);
    for x in x0..=x1 {
        img.put_pixel(x as u32, y0 as u32, color);
        img.put_pixel(x as u32, y1 as u32, color);
    }
    for y in y0..=y1 {
        img.put_pixel(x0 as u32, y as u32, color);
        img.put_pixel(x1 as u32, y as u32, color);
    }
}

/// The image with the defect mask blended in red and selected patches
/// outlined in yellow.
fn overlay(image: &RgbImage, result: &InspectionResult) -> Result<RgbImage> {
    let mask = result.mask()?;
    let mut out = image.clone();
    for (x, y, px) in out.enumerate_pixels_mut() {
        if mask.get(x as usize, y as usize) {
            let [r, g, b] = px.0;
            *px = Rgb([r / 2 + 128, g / 2, b / 2]);
        }
    }
    for v in result.verdicts.iter().filter(|v| v.selected) {
        outline(&mut out, &v.patch, Rgb([255, 220, 0]));
    }
    Ok(out)
}

fn load_config(path: Option<&Path>, seed: Option<u64>) -> Result<Config> {
    let mut cfg = match path {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    if let Some(s) = seed {
        cfg.train.seed = s;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    configure_threads()?;
    match cli.command {
        Command::Synth { spec, count, out } => {
            let mut s = match spec {
                Some(p) => SyntheticSpec::parse(&fs::read_to_string(p)?)?,
                None => SyntheticSpec::default(),
            };
            if let Some(seed) = cli.seed {
                s.seed = seed;
            }
            let records = generate_synthetic(&s, count)?;
            let manifest = write_synthetic_dataset(&out, &s, &records)?;
            println!(
                "wrote {} images ({} train, {} test, {} defective) to {}",
                manifest.count,
                manifest.stats.train,
                manifest.stats.test,
                manifest.stats.defective,
                out.display()
            );
        }
        Command::Train {
            data,
            layout,
            config,
            stage,
            init,
            out,
        } => {
            let cfg = load_config(config.as_deref(), cli.seed)?;
            let records = load_dataset(&data, layout)?;
            let mut pipeline = Pipeline::new(cfg)?;
            // Stages carried over from --init are saved again untouched.
            let mut kept = StageSet { stage1: false, stage2: false };
            if let Some(p) = init {
                let loaded = Pipeline::load(&p)?;
                kept = StageSet {
                    stage1: loaded.stage1.is_some(),
                    stage2: loaded.stage2.is_some(),
                };
                pipeline.stage1 = loaded.stage1.or(pipeline.stage1);
                pipeline.stage2 = loaded.stage2.or(pipeline.stage2);
            }
            let stages = match stage {
                StageArg::One => StageSet { stage1: true, stage2: false },
                StageArg::Two => StageSet { stage1: false, stage2: true },
                StageArg::Both => StageSet::BOTH,
            };
            pipeline.train(&records, stages, |s, e, l| {
                println!(
                    "stage {s} epoch {e}: l_cls={:.6} l_loc={:.6} l_pat={:.6} total={:.6}",
                    l.l_cls, l.l_loc, l.l_pat, l.total
                );
            })?;
            let saved = StageSet {
                stage1: stages.stage1 || kept.stage1,
                stage2: stages.stage2 || kept.stage2,
            };
            pipeline.save(&out, saved)?;
            println!("checkpoint written to {}", out.display());
        }
        Command::Inspect {
            image,
            checkpoint,
            skip_stage1,
            out,
        } => {
            let pipeline = Pipeline::load(&checkpoint)?;
            let img = read_rgb(&image)?;
            let result = pipeline.inspect(&img, skip_stage1)?;
            fs::create_dir_all(&out)?;
            let stem = image.file_stem().and_then(|s| s.to_str()).unwrap_or("image");
            write_json(&out.join(format!("{stem}.json")), &result)?;
            write_rgb(&out.join(format!("{stem}_overlay.png")), &overlay(&img, &result)?)?;
            println!(
                "{} patches, {} selected, {} detections, {} defect pixels, {:.1} ms",
                result.verdicts.len(),
                result.selected_count(),
                result.detections.len(),
                result.defect_pixels,
                result.timings.total_ms
            );
        }
        Command::Eval {
            data,
            layout,
            checkpoint,
            skip_stage1,
            sweep,
            out,
        } => {
            let mut pipeline = Pipeline::load(&checkpoint)?;
            if let Some(s) = cli.seed {
                pipeline.config.train.seed = s;
            }
            let records = load_dataset(&data, layout)?;
            let test: Vec<_> = records.iter().filter(|r| r.split == Split::Test).cloned().collect();
            let eval_on = if test.is_empty() { &records } else { &test };
            let report = evaluate(&pipeline, eval_on, skip_stage1)?;
            fs::create_dir_all(&out)?;
            write_json(&out.join("report.json"), &report)?;
            fs::write(out.join("report.txt"), report.to_text())?;
            print!("{}", report.to_text());
            if sweep {
                let points = scale_sweep(&records, &[0.3, 0.6, 1.0], &pipeline.config)?;
                write_json(&out.join("sweep.json"), &points)?;
                let mut text = String::from("fraction  defective+clean  pixel ACC (%)\n");
                for p in &points {
                    text += &format!(
                        "{:>7.0}%  {:>6}+{:<8}  {:.2}\n",
                        100.0 * p.fraction,
                        p.defective_images,
                        p.clean_images,
                        100.0 * p.mean_acc
                    );
                }
                fs::write(out.join("sweep.txt"), &text)?;
                print!("{text}");
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
