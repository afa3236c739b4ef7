//! Command line interface for the cwic image codec.

mod config;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use config::RunConfig;
use cwic::autoenc::{
    ms_ssim_loss, psnr_db, train_autoencoder, DistortionKind, ModelBundle, Trainer,
    TrainerOptions,
};
use cwic::codec::{bits_per_pixel, decode_cuboid, decode_image, encode_image, DecodeMode};
use cwic::container::{
    load_model_file, read_bitstream, save_model_file, TrainedModel, BITSTREAM_VERSION, HEADER_LEN,
};
use cwic::entropy::{remap_codes, train_entropy_model_with_schedule, TcaeModel};
use cwic::importance::ImportanceMask;
use cwic::metrics::{format_eval_csv, format_training_csv, write_csv_file, EvalRow};
use cwic::ppm::{parse_ppm, write_ppm_file};
use cwic::synth::toy_corpus;
use cwic::tensor::FeatureCuboid;
use cwic::{Error, Result};

#[derive(Parser)]
#[command(
    name = "cwic",
    version,
    about = "Content-weighted image compression with a learned importance map"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model on a directory of binary PPM images
    Train(TrainArgs),
    /// Compress one PPM image into a .cws stream
    Encode(EncodeArgs),
    /// Decompress a .cws stream back to a PPM image
    Decode(DecodeArgs),
    /// Compress and reconstruct a corpus, reporting rate and quality
    Eval(EvalArgs),
    /// Describe a stream without fully decoding the image
    Inspect(InspectArgs),
    /// Generate a synthetic corpus of smooth images with textured patches
    Synth(SynthArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Switch {
    On,
    Off,
}

impl Switch {
    fn as_bool(self) -> bool {
        self == Switch::On
    }

    fn decode_mode(self) -> DecodeMode {
        match self {
            Switch::On => DecodeMode::PlaneBatched,
            Switch::Off => DecodeMode::PerPosition,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum LossArg {
    Mse,
    Msssim,
}

#[derive(Args)]
struct TrainArgs {
    /// TOML run configuration
    #[arg(long)]
    config: PathBuf,
    /// Directory of .ppm training images
    #[arg(long)]
    corpus: PathBuf,
    /// Where to write the trained model
    #[arg(long)]
    model: PathBuf,
    /// Optional CSV log with one row per training step
    #[arg(long)]
    log: Option<PathBuf>,
    /// Overrides the seed from the configuration
    #[arg(long)]
    seed: Option<u64>,
    /// Reconstruction loss for the joint phase
    #[arg(long, value_enum, default_value = "mse")]
    loss: LossArg,
    /// Evaluate batch images concurrently
    #[arg(long, value_enum, default_value = "on")]
    parallel_planes: Switch,
}

#[derive(Args)]
struct EncodeArgs {
    /// Trained model file
    #[arg(long)]
    model: PathBuf,
    /// Input PPM image
    input: PathBuf,
    /// Output stream path
    #[arg(long, short)]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "on")]
    parallel_planes: Switch,
}

#[derive(Args)]
struct DecodeArgs {
    /// Trained model file
    #[arg(long)]
    model: PathBuf,
    /// Input stream
    input: PathBuf,
    /// Output PPM path
    #[arg(long, short)]
    out: PathBuf,
    /// on decodes one inclined plane per model pass, off one position
    #[arg(long, value_enum, default_value = "on")]
    parallel_planes: Switch,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    /// Directory of .ppm images
    #[arg(long)]
    corpus: PathBuf,
    /// CSV output path; stdout when omitted
    #[arg(long, short)]
    out: Option<PathBuf>,
    /// Adds a similarity-loss column when set to msssim
    #[arg(long, value_enum, default_value = "mse")]
    loss: LossArg,
    /// Scale count for the similarity column
    #[arg(long, default_value_t = cwic::autoenc::DEFAULT_MS_SSIM_SCALES)]
    scales: usize,
    #[arg(long, value_enum, default_value = "on")]
    parallel_planes: Switch,
}

#[derive(Args)]
struct InspectArgs {
    /// Input stream
    input: PathBuf,
    /// With a model the importance map is decoded and summarized
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "on")]
    parallel_planes: Switch,
}

#[derive(Args)]
struct SynthArgs {
    /// Output directory for the generated .ppm files
    #[arg(long, short)]
    out: PathBuf,
    #[arg(long, default_value_t = 32)]
    count: usize,
    /// Square image side, a multiple of 8
    #[arg(long, default_value_t = 32)]
    size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let run = match cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Encode(a) => cmd_encode(a),
        Command::Decode(a) => cmd_decode(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Inspect(a) => cmd_inspect(a),
        Command::Synth(a) => cmd_synth(a),
    };
    match run {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}

/// 2 for I/O failures, 3 for configuration or usage problems, 4 for
/// damaged streams or model files, 1 otherwise.
fn exit_code_for(e: &Error) -> u8 {
    match e {
        Error::Io { .. } => 2,
        Error::Config(_) | Error::Input(_) => 3,
        Error::CorruptData(_) | Error::CorruptModel(_) => 4,
        _ => 1,
    }
}

fn read_ppm_named(path: &Path) -> Result<FeatureCuboid> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_ppm(&bytes).map_err(|e| Error::input(format!("{}: {e}", path.display())))
}

fn corpus_paths(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let path = entry.path();
        if path.extension().is_some_and(|x| x == "ppm") {
            paths.push(path);
        }
    }
    paths.sort();
    if paths.is_empty() {
        return Err(Error::input(format!("no .ppm images in {}", dir.display())));
    }
    Ok(paths)
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let text = fs::read_to_string(&args.config).map_err(|e| Error::io(&args.config, e))?;
    let cfg = RunConfig::parse(&text)?;
    let seed = args.seed.unwrap_or(cfg.training.seed);
    let parallel = args.parallel_planes.as_bool();

    let mut images = Vec::new();
    for path in corpus_paths(&args.corpus)? {
        images.push(cwic::codec::pad_image(&read_ppm_named(&path)?)?);
    }

    let distortion = match args.loss {
        LossArg::Mse => DistortionKind::MeanSquaredError,
        LossArg::Msssim => DistortionKind::MultiScaleSimilarity { scales: cfg.msssim_scales() },
    };
    let mut bundle =
        ModelBundle::init(cfg.network(), cfg.importance()?, cfg.quantizer.levels, seed)?;
    let mut steps = Vec::new();
    if cfg.training.pretrain_epochs > 0 {
        let options = TrainerOptions {
            distortion: distortion.clone(),
            pretrain: true,
            freeze_quantizer: false,
            parallel,
            lr_ladder: cfg.autoenc_ladder(),
            patience: cfg.autoenc_patience(),
        };
        let mut trainer = Trainer::new(bundle, options)?;
        steps.extend(train_autoencoder(
            &mut trainer,
            &images,
            cfg.training.pretrain_epochs,
            cfg.training.batch_size,
            seed ^ 1,
        )?);
        bundle = trainer.into_bundle();
    }
    if cfg.training.epochs > 0 {
        let options = TrainerOptions {
            distortion,
            pretrain: false,
            freeze_quantizer: false,
            parallel,
            lr_ladder: cfg.autoenc_ladder(),
            patience: cfg.autoenc_patience(),
        };
        let mut trainer = Trainer::new(bundle, options)?;
        steps.extend(train_autoencoder(
            &mut trainer,
            &images,
            cfg.training.epochs,
            cfg.training.batch_size,
            seed ^ 2,
        )?);
        bundle = trainer.into_bundle();
    }

    // The context models learn on exactly the symbol streams the coder will
    // see: remapped codes under the mask, and the raw importance levels.
    let mut code_corpus = Vec::new();
    let mut importance_corpus = Vec::new();
    for x in &images {
        let (levels, qi, mask) = bundle.analyze(x)?;
        code_corpus.push((remap_codes(&levels, &mask)?, mask));
        let ones = ImportanceMask::all_ones(1, qi.height(), qi.width());
        importance_corpus.push((qi.to_code_cuboid(), ones));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 3);
    let mut code_model = TcaeModel::init(cfg.code_entropy_config(), &mut rng)?;
    let mut importance_model = TcaeModel::init(cfg.importance_entropy_config(), &mut rng)?;
    train_entropy_model_with_schedule(
        &mut code_model,
        &code_corpus,
        cfg.entropy.epochs,
        cfg.training.batch_size,
        seed ^ 4,
        parallel,
        cfg.entropy_ladder(),
        cfg.entropy_patience(),
    )?;
    train_entropy_model_with_schedule(
        &mut importance_model,
        &importance_corpus,
        cfg.entropy.epochs,
        cfg.training.batch_size,
        seed ^ 5,
        parallel,
        cfg.entropy_ladder(),
        cfg.entropy_patience(),
    )?;

    let model = TrainedModel::new(bundle, code_model, importance_model)?;
    save_model_file(&args.model, &model)?;

    if let Some(log) = &args.log {
        let pixels = images.iter().map(|x| x.height() * x.width()).sum::<usize>() / images.len();
        let positions = pixels / (cwic::autoenc::SPATIAL_RATIO * cwic::autoenc::SPATIAL_RATIO);
        let csv = format_training_csv(
            &steps,
            cfg.quantizer.levels,
            cfg.importance.levels,
            positions,
            pixels,
        );
        write_csv_file(log, &csv)?;
    }
    println!("trained on {} images; model written to {}", images.len(), args.model.display());
    Ok(())
}

fn cmd_encode(args: EncodeArgs) -> Result<()> {
    let model = load_model_file(&args.model)?;
    let image = read_ppm_named(&args.input)?;
    let (_, h, w) = image.shape();
    let stream = encode_image(&model, &image, args.parallel_planes.as_bool())?;
    fs::write(&args.out, &stream).map_err(|e| Error::io(&args.out, e))?;
    println!("wrote {} ({} bytes)", args.out.display(), stream.len());
    println!("bits per pixel: {:.4}", bits_per_pixel(stream.len(), h, w));
    Ok(())
}

fn cmd_decode(args: DecodeArgs) -> Result<()> {
    let model = load_model_file(&args.model)?;
    let stream = fs::read(&args.input).map_err(|e| Error::io(&args.input, e))?;
    let image = decode_image(
        &model,
        &stream,
        args.parallel_planes.decode_mode(),
        args.parallel_planes.as_bool(),
    )?;
    write_ppm_file(&args.out, &image)?;
    println!("wrote {}", args.out.display());
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let model = load_model_file(&args.model)?;
    let parallel = args.parallel_planes.as_bool();
    let mode = args.parallel_planes.decode_mode();
    let mut rows = Vec::new();
    for path in corpus_paths(&args.corpus)? {
        let image = read_ppm_named(&path)?;
        let (_, h, w) = image.shape();
        let stream = encode_image(&model, &image, parallel)?;
        let restored = decode_image(&model, &stream, mode, parallel)?;
        let ms_ssim = match args.loss {
            LossArg::Mse => None,
            LossArg::Msssim => Some(ms_ssim_loss(&restored, &image, args.scales)?),
        };
        rows.push(EvalRow {
            image: path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default(),
            bpp: bits_per_pixel(stream.len(), h, w),
            psnr_db: psnr_db(&restored, &image)?,
            ms_ssim_loss: ms_ssim,
        });
    }
    let csv = format_eval_csv(&rows);
    match &args.out {
        Some(path) => write_csv_file(path, &csv)?,
        None => print!("{csv}"),
    }
    Ok(())
}

fn hex16(digest: &[u8; 16]) -> String {
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

fn cmd_inspect(args: InspectArgs) -> Result<()> {
    let stream = fs::read(&args.input).map_err(|e| Error::io(&args.input, e))?;
    let (header, importance_payload, code_payload) = read_bitstream(&stream)?;
    println!("stream: {}", args.input.display());
    println!("  format version: {BITSTREAM_VERSION}");
    println!(
        "  coded size: {}x{} (original {}x{})",
        header.coded_height, header.coded_width, header.orig_height, header.orig_width
    );
    println!(
        "  code channels: {}  quantizer levels: {}  importance levels: {}",
        header.code_channels, header.quant_levels, header.importance_levels
    );
    println!("  model digest: {}", hex16(&header.model_digest));
    println!(
        "  bytes: header {}  importance {}  code {}  total {}",
        HEADER_LEN,
        importance_payload.len(),
        code_payload.len(),
        stream.len()
    );
    println!(
        "  bits per pixel: {:.4}",
        bits_per_pixel(stream.len(), header.orig_height as usize, header.orig_width as usize)
    );
    let Some(model_path) = &args.model else {
        return Ok(());
    };
    let model = load_model_file(model_path)?;
    let (_, qi, mask, _) = decode_cuboid(
        &model,
        &stream,
        args.parallel_planes.decode_mode(),
        args.parallel_planes.as_bool(),
    )?;
    let cells = qi.height() * qi.width();
    println!("  importance histogram over {cells} cells:");
    for (level, count) in qi.histogram().iter().enumerate() {
        println!("    level {level}: {count}");
    }
    let per_level = header.code_channels as u64 / header.importance_levels as u64;
    let implied = per_level * qi.level_sum();
    let verdict = if implied == mask.count() { "consistent" } else { "INCONSISTENT" };
    println!("  kept code symbols: {} ({verdict} with the importance map)", mask.count());
    println!("  importance map (one digit per cell, row major):");
    for y in 0..qi.height() {
        let mut line = String::from("    ");
        for x in 0..qi.width() {
            line.push(char::from_digit(qi.get(y, x) as u32 % 36, 36).unwrap_or('#'));
        }
        println!("{line}");
    }
    Ok(())
}

fn cmd_synth(args: SynthArgs) -> Result<()> {
    let images = toy_corpus(args.count, args.size, args.size, args.seed)?;
    fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;
    for (i, toy) in images.iter().enumerate() {
        let path = args.out.join(format!("toy{i:04}.ppm"));
        write_ppm_file(&path, &toy.image)?;
    }
    println!("wrote {} images to {}", images.len(), args.out.display());
    Ok(())
}
