use std::f64::consts::PI;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use rgbp::dataset::{
    list_ids, load_tensor, load_triplet, plane_to_tensor, quad_to_tensor, save_tensor, stem,
    synth_dataset, tensor_path, tensor_to_plane, tensor_to_quad, AnnotationSet, ImageEntry,
    SynthParams,
};
use rgbp::eval::coco_ap;
use rgbp::mosaic::{extract_quad, merge_quad, MosaicFrame, MosaicPattern};
use rgbp::pcdnet::{cases, parse_mp_assignment, Network, NetworkConfig, NetworkInput};
use rgbp::polar::{compute_polar_maps, compute_stokes, Plane};
use rgbp::tensor::{DType, Tensor};
use rgbp::{Error, Result};

const EXIT_VALIDATION: u8 = 1;
const EXIT_INTERNAL: u8 = 2;
const EXIT_USAGE: u8 = 64;

/// Polarization–RGB detection toolkit.
///
/// Exit status: 0 success, 1 invalid input, 2 internal or I/O failure,
/// 64 usage error. `RGBP_THREADS` caps worker threads without changing
/// results.
#[derive(Parser, Debug)]
#[command(name = "rgbp", version)]
struct Cli {
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Stokes parameters, AoLP and DoLP from quad or mosaic captures.
    Stokes(StokesArgs),
    /// Split a mosaic tensor into its four angle planes.
    Demosaic(DemosaicArgs),
    /// Generate synthetic polarized scenes with annotations.
    Synth(SynthArgs),
    /// Run the detector over a triplet directory.
    Forward(ForwardArgs),
    /// COCO-style AP of detections against ground truth.
    Eval(EvalArgs),
    /// Finite-difference gradient checks.
    Gradcheck(GradcheckArgs),
    /// Write seeded random network weights.
    InitWeights(InitArgs),
}

#[derive(Args, Debug)]
struct StokesArgs {
    /// Directory containing `quad/` or `mosaic/` tensors.
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Mosaic layout, e.g. "90,45;135,0 RG;GB" (color) or "90,45;135,0".
    #[arg(long, default_value_t = MosaicPattern::color())]
    pattern: MosaicPattern,
    /// Also write 8-bit AoLP/DoLP PNGs under `png/`.
    #[arg(long)]
    png: bool,
}

#[derive(Args, Debug)]
struct DemosaicArgs {
    /// Mosaic tensor `(1, 1, H, W)`.
    #[arg(long = "in")]
    input: PathBuf,
    /// Output quad tensor `(4, C, H', W')`.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = MosaicPattern::color())]
    pattern: MosaicPattern,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Boxes per frame: `N` or `MIN-MAX`.
    #[arg(long, default_value = "1-3")]
    boxes: String,
    /// Box side length range in pixels: `N` or `MIN-MAX`.
    #[arg(long, default_value = "8-24")]
    box_size: String,
    #[arg(long, default_value_t = 1)]
    frames: usize,
    /// Frame size `HxW`.
    #[arg(long, default_value = "64x64")]
    size: String,
    /// Gaussian noise sigma on each intensity.
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    /// Write color mosaics (`mosaic/`) instead of quads (`quad/`).
    #[arg(long)]
    mosaic: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct NetArgs {
    /// TOML network configuration; defaults apply otherwise.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the configuration seed.
    #[arg(long)]
    seed: Option<u64>,
    /// MP assignment per stage, e.g. `S-C-C`.
    #[arg(long)]
    mp: Option<String>,
    #[arg(long)]
    no_mp: bool,
    #[arg(long)]
    no_sdmd: bool,
    #[arg(long)]
    no_cwda: bool,
    #[arg(long)]
    score_thresh: Option<f64>,
    #[arg(long)]
    nms_iou: Option<f64>,
}

#[derive(Args, Debug)]
struct ForwardArgs {
    /// Triplet directory (`rgb/`, `aolp/`, `dolp/`).
    #[arg(long = "in")]
    input: PathBuf,
    /// RGBPW weights; seeded random weights when omitted.
    #[arg(long)]
    weights: Option<PathBuf>,
    /// Detections JSON to write.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    net: NetArgs,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Detections JSON.
    #[arg(long)]
    det: PathBuf,
    /// Ground-truth JSON.
    #[arg(long)]
    gt: PathBuf,
}

#[derive(Args, Debug)]
struct GradcheckArgs {
    /// Case name, or `all`.
    #[arg(long, default_value = "all")]
    module: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct InitArgs {
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    net: NetArgs,
}

fn parse_range(s: &str, what: &str) -> Result<(usize, usize)> {
    let parse = |t: &str| {
        t.trim()
            .parse::<usize>()
            .map_err(|_| Error::Validation(format!("{what}: `{s}` is not `N` or `MIN-MAX`")))
    };
    match s.split_once('-') {
        Some((a, b)) => Ok((parse(a)?, parse(b)?)),
        None => {
            let n = parse(s)?;
            Ok((n, n))
        }
    }
}

fn parse_size(s: &str) -> Result<(usize, usize)> {
    let bad = || Error::Validation(format!("size `{s}` is not `HxW`"));
    let (h, w) = s.split_once(['x', 'X']).ok_or_else(bad)?;
    Ok((h.parse().map_err(|_| bad())?, w.parse().map_err(|_| bad())?))
}

fn network_config(args: &NetArgs) -> Result<NetworkConfig> {
    let mut cfg = match &args.config {
        Some(p) => NetworkConfig::load(p)?,
        None => NetworkConfig::default(),
    };
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(mp) = &args.mp {
        cfg.mp_assignment = parse_mp_assignment(mp)?;
    }
    cfg.use_mp &= !args.no_mp;
    cfg.use_sdmd &= !args.no_sdmd;
    cfg.use_cwda &= !args.no_cwda;
    if let Some(t) = args.score_thresh {
        cfg.score_thresh = t;
    }
    if let Some(t) = args.nms_iou {
        cfg.nms_iou = t;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// AoLP over `[0, π)` and DoLP over `[0, 1]` mapped linearly to 8 bits.
fn write_png(path: &Path, plane: &Plane<f64>, scale: f64) -> Result<()> {
    let (c, h, w) = plane.dims();
    let mut buf = Vec::with_capacity(h * w * 3);
    for y in 0..h {
        for x in 0..w {
            for ch in 0..3 {
                let v = plane.get(ch.min(c - 1), y, x) * scale;
                buf.push((v * 255.0).round().clamp(0.0, 255.0) as u8);
            }
        }
    }
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    image::save_buffer(
        path,
        &buf,
        w as u32,
        h as u32,
        image::ExtendedColorType::Rgb8,
    )
    .map_err(|e| Error::Io(std::io::Error::other(e)))
}

fn stokes(args: &StokesArgs) -> Result<()> {
    let (kind, ids) = if args.input.join("quad").is_dir() {
        ("quad", list_ids(&args.input, "quad")?)
    } else if args.input.join("mosaic").is_dir() {
        ("mosaic", list_ids(&args.input, "mosaic")?)
    } else {
        return Err(Error::NotFound(args.input.join("quad")));
    };
    ids.par_iter().try_for_each(|&id| -> Result<()> {
        let raw = load_tensor(&tensor_path(&args.input, kind, id))?;
        let quad = if kind == "quad" {
            tensor_to_quad(&raw)?
        } else {
            extract_quad(&MosaicFrame::new(
                tensor_to_plane(&raw)?,
                args.pattern.clone(),
            )?)?
        };
        let s = compute_stokes(&quad)?;
        let maps = compute_polar_maps(&s)?;
        let out = |k: &str, t: &Tensor| save_tensor(&tensor_path(&args.out, k, id), t, DType::F64);
        out("s0", &plane_to_tensor(&s.s0))?;
        out("s1", &plane_to_tensor(&s.s1))?;
        out("s2", &plane_to_tensor(&s.s2))?;
        out("rgb", &plane_to_tensor(&s.s0).map(|v| v.clamp(0.0, 1.0)))?;
        out("aolp", &plane_to_tensor(&maps.aolp).map(|v| v / PI))?;
        out("dolp", &plane_to_tensor(&maps.dolp))?;
        if args.png {
            let dir = args.out.join("png");
            write_png(
                &dir.join(format!("{}_aolp.png", stem(id))),
                &maps.aolp,
                1.0 / PI,
            )?;
            write_png(&dir.join(format!("{}_dolp.png", stem(id))), &maps.dolp, 1.0)?;
        }
        Ok(())
    })?;
    println!("stokes frames={} out={}", ids.len(), args.out.display());
    Ok(())
}

fn demosaic(args: &DemosaicArgs) -> Result<()> {
    let raw = load_tensor(&args.input)?;
    let quad = extract_quad(&MosaicFrame::new(
        tensor_to_plane(&raw)?,
        args.pattern.clone(),
    )?)?;
    save_tensor(&args.out, &quad_to_tensor(&quad), DType::F64)?;
    let (c, h, w) = quad.dims();
    println!("demosaic quad={c}x{h}x{w} out={}", args.out.display());
    Ok(())
}

fn synth(args: &SynthArgs) -> Result<()> {
    let (height, width) = parse_size(&args.size)?;
    let params = SynthParams {
        height,
        width,
        boxes: parse_range(&args.boxes, "boxes")?,
        box_size: parse_range(&args.box_size, "box-size")?,
        noise_sigma: args.noise,
        seed: args.seed,
        ..SynthParams::default()
    };
    let (scenes, set) = synth_dataset(&params, args.frames)?;
    let pattern = MosaicPattern::color();
    scenes.par_iter().try_for_each(|s| -> Result<()> {
        let id = s.truth.image_id;
        if args.mosaic {
            let frame = merge_quad(&s.quad, &pattern)?;
            save_tensor(
                &tensor_path(&args.out, "mosaic", id),
                &plane_to_tensor(frame.data()),
                DType::F64,
            )?;
        } else {
            save_tensor(
                &tensor_path(&args.out, "quad", id),
                &quad_to_tensor(&s.quad),
                DType::F64,
            )?;
        }
        rgbp::dataset::save_triplet(&args.out.join("truth"), &s.truth)
    })?;
    set.save(&args.out.join("annotations.json"))?;
    println!(
        "synth frames={} boxes={} out={}",
        scenes.len(),
        set.annotations.len(),
        args.out.display()
    );
    Ok(())
}

fn forward(args: &ForwardArgs) -> Result<()> {
    let cfg = network_config(&args.net)?;
    let net = match &args.weights {
        Some(w) => Network::load(cfg, w)?,
        None => Network::init(cfg)?,
    };
    let ids = list_ids(&args.input, "rgb")?;
    let results: Vec<(ImageEntry, Vec<_>)> = ids
        .par_iter()
        .map(|&id| {
            let t = load_triplet(&args.input, id)?;
            let entry = ImageEntry {
                id,
                width: t.width() as u32,
                height: t.height() as u32,
                file: stem(id),
            };
            let input = NetworkInput::from_radians(t.rgb, t.aolp, t.dolp)?;
            Ok((entry, net.detect(&input, &[id])?))
        })
        .collect::<Result<_>>()?;
    let mut images = Vec::with_capacity(results.len());
    let mut dets = Vec::new();
    for (img, d) in results {
        images.push(img);
        dets.extend(d);
    }
    let set = AnnotationSet::from_detections(images, &dets);
    set.save(&args.out)?;
    println!(
        "forward images={} detections={} out={}",
        set.images.len(),
        dets.len(),
        args.out.display()
    );
    Ok(())
}

fn eval(args: &EvalArgs) -> Result<()> {
    let det = AnnotationSet::load(&args.det)?;
    let gt = AnnotationSet::load(&args.gt)?;
    let r = coco_ap(&det.detections(), &gt.ground_truth(), &gt.image_infos())?;
    println!("AP AP50 AP75");
    println!("{:.4} {:.4} {:.4}", r.ap, r.ap50, r.ap75);
    Ok(())
}

fn gradcheck(args: &GradcheckArgs) -> Result<bool> {
    let names: Vec<&str> = if args.module == "all" {
        cases::CASE_NAMES.to_vec()
    } else {
        vec![args.module.as_str()]
    };
    let mut ok = true;
    for name in names {
        let report = cases::run(name, args.seed)?;
        println!("{report}");
        ok &= report.pass;
    }
    Ok(ok)
}

fn init_weights(args: &InitArgs) -> Result<()> {
    let net = Network::init(network_config(&args.net)?)?;
    if let Some(parent) = args.out.parent() {
        std::fs::create_dir_all(parent)?;
    }
    net.save(&args.out)?;
    println!(
        "init-weights seed={} out={}",
        net.config().seed,
        args.out.display()
    );
    Ok(())
}

fn configure_threads() -> Result<()> {
    let Ok(v) = std::env::var("RGBP_THREADS") else {
        return Ok(());
    };
    let n: usize = v.trim().parse().ok().filter(|&n| n > 0).ok_or_else(|| {
        Error::Validation(format!("RGBP_THREADS=`{v}` is not a positive integer"))
    })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::Io(std::io::Error::other(e)))
}

fn run(cli: &Cli) -> Result<bool> {
    configure_threads()?;
    match &cli.command {
        Command::Stokes(a) => stokes(a)?,
        Command::Demosaic(a) => demosaic(a)?,
        Command::Synth(a) => synth(a)?,
        Command::Forward(a) => forward(a)?,
        Command::Eval(a) => eval(a)?,
        Command::Gradcheck(a) => return gradcheck(a),
        Command::InitWeights(a) => init_weights(a)?,
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => {
                    ExitCode::SUCCESS
                }
                _ => ExitCode::from(EXIT_USAGE),
            };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match std::panic::catch_unwind(|| run(&cli)) {
        Ok(Ok(true)) => ExitCode::SUCCESS,
        Ok(Ok(false)) => ExitCode::from(EXIT_VALIDATION),
        Ok(Err(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_user_error() {
                EXIT_VALIDATION
            } else {
                EXIT_INTERNAL
            })
        }
        Err(_) => ExitCode::from(EXIT_INTERNAL),
    }
}
