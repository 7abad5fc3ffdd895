use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use invdn::checkpoint::{checkpoint_path, load_checkpoint, load_checkpoint_for, read_checkpoint, save_checkpoint};
use invdn::config::{worker_count, RunConfig};
use invdn::error::{exit, Error, Result};
use invdn::image::ImagePatch;
use invdn::inference::{denoise, generate_noisy, DenoiseOptions, NoiseGenOptions, DEFAULT_EPSILON, DEFAULT_OVERLAP};
use invdn::io::{list_pngs, load_image, save_image_with_depth, write_atomic, BitDepth};
use invdn::metrics::{akld_single, ImageMetrics, MetricReport};
use invdn::model::InvDnModel;
use invdn::training::{open_dataset, PairSource, SyntheticSource, Trainer};

#[derive(Parser)]
#[command(name = "invdn", version, about = "Invertible denoising network")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write checkpoints
    Train(TrainArgs),
    /// Denoise an image or every PNG in a directory
    Denoise(DenoiseArgs),
    /// Synthesise a new noisy image by perturbing the latent
    GenerateNoise(GenerateArgs),
    /// Denoise noisy/clean pairs and report PSNR, SSIM and optionally AKLD
    Eval(EvalArgs),
    /// Print the configuration and parameter count of a checkpoint
    Inspect(InspectArgs),
}

#[derive(Args)]
struct TrainArgs {
    /// `key = value` configuration file
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset root with `clean/` and optional `noisy/`; procedural
    /// textures are used when omitted
    #[arg(long)]
    data: Option<PathBuf>,
    /// Output directory for checkpoints
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    iters: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Continue from a checkpoint
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Extra `key=value` overrides
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Args)]
struct TileArgs {
    /// Process in overlapping tiles of this size
    #[arg(long)]
    tile: Option<usize>,
    #[arg(long, default_value_t = DEFAULT_OVERLAP)]
    overlap: usize,
}

#[derive(Args)]
struct DenoiseArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    /// Monte Carlo samples averaged per image
    #[arg(long, default_value_t = 1)]
    mc: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    tiling: TileArgs,
    /// Output bit depth (8 or 16)
    #[arg(long, default_value_t = 8)]
    bit_depth: u8,
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    #[arg(long, default_value_t = DEFAULT_EPSILON)]
    epsilon: f32,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    tiling: TileArgs,
    #[arg(long, default_value_t = 8)]
    bit_depth: u8,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    noisy: PathBuf,
    #[arg(long)]
    clean: PathBuf,
    /// Also score noise synthesis with AKLD
    #[arg(long)]
    akld: bool,
    #[arg(long, default_value_t = 1)]
    mc: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = DEFAULT_EPSILON)]
    epsilon: f32,
    #[command(flatten)]
    tiling: TileArgs,
    /// Write the per-image table as CSV
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct InspectArgs {
    #[arg(long)]
    ckpt: PathBuf,
}

fn bit_depth(v: u8) -> Result<BitDepth> {
    match v {
        8 => Ok(BitDepth::Eight),
        16 => Ok(BitDepth::Sixteen),
        _ => Err(Error::Config(format!("bit depth must be 8 or 16, got {v}"))),
    }
}

fn thread_pool() -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(worker_count()?)
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))
}

fn load_model(path: &Path) -> Result<InvDnModel> {
    Ok(load_checkpoint(path)?.0)
}

fn file_name(p: &Path) -> String {
    p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default()
}

fn train(args: TrainArgs) -> Result<()> {
    let mut overrides = Vec::new();
    for kv in &args.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got `{kv}`")))?;
        overrides.push((k.trim().to_string(), v.trim().to_string()));
    }
    if let Some(n) = args.iters {
        overrides.push(("iters".into(), n.to_string()));
    }
    if let Some(s) = args.seed {
        overrides.push(("seed".into(), s.to_string()));
    }
    let rc = match &args.config {
        Some(p) => RunConfig::from_file(p, &overrides)?,
        None => RunConfig::resolve(None, &overrides)?,
    };
    std::fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;
    write_atomic(&args.out.join("config.txt"), rc.describe().as_bytes())?;
    print!("{}", rc.describe());

    let mut trainer = match &args.resume {
        Some(p) => {
            let (model, adam, iteration) = load_checkpoint_for(p, &rc.model)?;
            let adam = adam.ok_or_else(|| Error::Checkpoint {
                path: p.clone(),
                msg: "checkpoint has no optimizer state to resume from".into(),
            })?;
            Trainer::resume(model, adam, rc.train.clone(), iteration)?
        }
        None => Trainer::new(InvDnModel::new(rc.model.clone(), rc.train.seed)?, rc.train.clone())?,
    };
    let channels = rc.model.input_channels;
    let mut source: Box<dyn PairSource> = match &args.data {
        Some(root) => open_dataset(root, channels, rc.train.patch, rc.train.noise)?,
        None => Box::new(SyntheticSource::procedural(channels, rc.train.noise)),
    };
    let remaining = rc.iters.saturating_sub(trainer.iteration);
    let (seed, every, log_every) = (rc.train.seed, rc.train.checkpoint_every, rc.train.log_every);
    let out = args.out.clone();
    trainer.run(source.as_mut(), remaining, |t, s| {
        if log_every > 0 && (t.iteration % log_every == 0 || t.iteration == 1) {
            println!(
                "iter={} loss_forw={:.6} loss_back={:.6} total={:.6} grad_norm={:.4} lr={:.3e}",
                t.iteration, s.loss_forw, s.loss_back, s.total, s.grad_norm, s.lr
            );
        }
        if every > 0 && t.iteration % every == 0 {
            save_checkpoint(&t.model, Some(&t.adam), t.iteration, seed, &checkpoint_path(&out, t.iteration))?;
        }
        Ok(())
    })?;
    let final_path = args.out.join("final.ckpt");
    save_checkpoint(&trainer.model, Some(&trainer.adam), trainer.iteration, seed, &final_path)?;
    println!("saved {} at iteration {}", final_path.display(), trainer.iteration);
    Ok(())
}

fn denoise_cmd(args: DenoiseArgs) -> Result<()> {
    let model = load_model(&args.ckpt)?;
    let depth = bit_depth(args.bit_depth)?;
    let opts = DenoiseOptions {
        mc_samples: args.mc,
        seed: args.seed,
        tile: args.tiling.tile,
        overlap: args.tiling.overlap,
    };
    opts.validate()?;
    let inputs = if args.input.is_dir() { list_pngs(&args.input)? } else { vec![args.input.clone()] };
    if inputs.is_empty() {
        return Err(Error::Config(format!("no PNG files in {}", args.input.display())));
    }
    std::fs::create_dir_all(&args.output).map_err(|e| Error::io(&args.output, e))?;
    let results: Vec<Result<String>> = thread_pool()?.install(|| {
        inputs
            .par_iter()
            .map(|p| {
                let out = denoise(&model, &load_image(p)?, &opts)?;
                let dst = args.output.join(file_name(p));
                save_image_with_depth(&out, &dst, depth)?;
                Ok(dst.display().to_string())
            })
            .collect()
    });
    for r in results {
        println!("wrote {}", r?);
    }
    Ok(())
}

fn generate_cmd(args: GenerateArgs) -> Result<()> {
    let model = load_model(&args.ckpt)?;
    let depth = bit_depth(args.bit_depth)?;
    let opts = NoiseGenOptions {
        epsilon: args.epsilon,
        seed: args.seed,
        tile: args.tiling.tile,
        overlap: args.tiling.overlap,
    };
    let out = generate_noisy(&model, &load_image(&args.input)?, &opts)?;
    save_image_with_depth(&out, &args.output, depth)?;
    println!("wrote {}", args.output.display());
    Ok(())
}

fn eval_cmd(args: EvalArgs) -> Result<()> {
    let model = load_model(&args.ckpt)?;
    let channels = model.config().input_channels;
    let noisy_files = list_pngs(&args.noisy)?;
    if noisy_files.is_empty() {
        return Err(Error::Config(format!("no PNG files in {}", args.noisy.display())));
    }
    let dn = DenoiseOptions { mc_samples: args.mc, seed: args.seed, tile: args.tiling.tile, overlap: args.tiling.overlap };
    let gen = NoiseGenOptions { epsilon: args.epsilon, seed: args.seed, tile: args.tiling.tile, overlap: args.tiling.overlap };
    dn.validate()?;
    gen.validate()?;
    let rows: Vec<Result<ImageMetrics>> = thread_pool()?.install(|| {
        noisy_files
            .par_iter()
            .map(|p| {
                let name = file_name(p);
                let noisy = load_image(p)?.with_channels(channels)?;
                let clean = load_image(&args.clean.join(&name))?.with_channels(channels)?;
                if !noisy.same_shape(&clean) {
                    return Err(Error::Config(format!("{name}: noisy and clean images differ in shape")));
                }
                let out = denoise(&model, &noisy, &dn)?;
                let mut m = ImageMetrics::compute(name, &out, &clean)?;
                if args.akld {
                    let generated: ImagePatch = generate_noisy(&model, &noisy, &gen)?;
                    m.akld = Some(akld_single(&noisy, &clean, &generated)?);
                }
                Ok(m)
            })
            .collect()
    });
    let mut report = MetricReport::default();
    for r in rows {
        report.push(r?);
    }
    print!("{}", report.to_lines());
    if let Some(path) = &args.report {
        write_atomic(path, report.to_csv().as_bytes())?;
    }
    Ok(())
}

fn inspect(args: InspectArgs) -> Result<()> {
    let ck = read_checkpoint(&args.ckpt)?;
    let c = ck.config.clone();
    let iteration = ck.iteration;
    let (version, seed, tensors, has_adam) = (ck.version, ck.seed, ck.tensors.len(), ck.adam.is_some());
    let (model, _) = ck.into_model(&args.ckpt)?;
    println!("format_version={version}");
    print!("{}", invdn::config::model_config_text(&c));
    println!("scale_factor={}", c.scale_factor());
    println!("iteration={iteration}");
    println!("seed={seed}");
    println!("tensors={tensors}");
    println!("optimizer_state={}", if has_adam { "yes" } else { "no" });
    println!("parameter_count={}", model.parameter_count());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(a) => train(a),
        Command::Denoise(a) => denoise_cmd(a),
        Command::GenerateNoise(a) => generate_cmd(a),
        Command::Eval(a) => eval_cmd(a),
        Command::Inspect(a) => inspect(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            let code = if e.use_stderr() { exit::USAGE } else { exit::OK };
            return ExitCode::from(code as u8);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
