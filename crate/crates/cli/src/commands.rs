use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::Args;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use umri::autotune::{self as tune, HoldoutKind, HyperConfig, TuneBase, TuneSettings};
use umri::decoders::{load_params, save_params, Architecture, DecoderState};
use umri::fitters::{ensemble_reconstruct, member_seeds, reconstruct_from, DEFAULT_ITERATIONS, DEFAULT_LR};
use umri::io::{self, Array};
use umri::metrics::{evaluate, EvaluationMode, Normalization};
use umri::mriops::{zero_filled, CoilMeasurement, RealGrid, SensitivityMaps};
use umri::phantom::{self, MaskKind, MaskSpec, PhantomSpec};
use umri::tv::tv_reconstruct;

use crate::config::{self, DecoderFile, Method, ReconFile, ReconFlags};
use crate::{CliError, Inputs};

fn parse_hw(s: &str) -> Result<[usize; 2], String> {
    let (h, w) = s.split_once(['x', 'X']).ok_or_else(|| format!("expected HxW, got {s:?}"))?;
    let p = |v: &str| v.trim().parse::<usize>().map_err(|e| format!("{v:?}: {e}"));
    Ok([p(h)?, p(w)?])
}

fn parse_mask_kind(s: &str) -> Result<MaskKind, String> {
    match s {
        "random" => Ok(MaskKind::Random),
        "equispaced" => Ok(MaskKind::Equispaced),
        _ => Err(format!("unknown mask kind {s:?} (random, equispaced)")),
    }
}

fn parse_holdout(s: &str) -> Result<HoldoutKind, String> {
    match s {
        "columns" => Ok(HoldoutKind::Columns),
        "samples" => Ok(HoldoutKind::Samples),
        _ => Err(format!("unknown hold-out kind {s:?} (columns, samples)")),
    }
}

fn parse_arch(s: &str) -> Result<Architecture, String> {
    match s {
        "convdecoder" => Ok(Architecture::ConvDecoder),
        "deepdecoder" => Ok(Architecture::DeepDecoder),
        _ => Err(format!("unknown architecture {s:?} (convdecoder, deepdecoder)")),
    }
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::new("internal", e.to_string()))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

/// Wall-clock facts, kept under their own manifest key so everything else
/// is reproducible.
fn run_info(start: Instant) -> Value {
    let now = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    json!({
        "timestamp_unix": now,
        "wall_seconds": start.elapsed().as_secs_f64(),
        "version": env!("CARGO_PKG_VERSION"),
    })
}

fn seed_or_env(flag: Option<u64>, file: Option<u64>) -> Result<u64, CliError> {
    match flag.or(file) {
        Some(s) => Ok(s),
        None => Ok(config::env_seed()?.unwrap_or(0)),
    }
}

struct Loaded {
    y: CoilMeasurement,
    maps: Option<SensitivityMaps>,
}

fn load_inputs(inputs: &Inputs) -> Result<Loaded, CliError> {
    let mask = io::read_mask(&inputs.mask)?;
    let y = io::read_measurement(&inputs.kspace, mask)?;
    let maps = match &inputs.maps {
        Some(p) => {
            let m = io::read_maps(p)?;
            if m.num_coils() != y.num_coils() || m.dims() != y.dims() {
                return Err(CliError::new(
                    "shape",
                    format!(
                        "{}: {} maps of {:?} do not match {} coils of {:?}",
                        p.display(),
                        m.num_coils(),
                        m.dims(),
                        y.num_coils(),
                        y.dims()
                    ),
                ));
            }
            Some(m)
        }
        None => None,
    };
    Ok(Loaded { y, maps })
}

fn read_slices(path: &Path) -> Result<Vec<RealGrid>, CliError> {
    Ok(io::read_array(path)?.to_real_grids()?)
}

fn read_single(path: &Path) -> Result<RealGrid, CliError> {
    let mut s = read_slices(path)?;
    if s.len() != 1 {
        return Err(CliError::new("shape", format!("{}: expected one image, found {}", path.display(), s.len())));
    }
    Ok(s.remove(0))
}

// ---------------------------------------------------------------- phantom

#[derive(Args, Debug)]
pub struct PhantomArgs {
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// JSON file with any of the settings below.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Use the 640 x 368 size instead of 128 x 96.
    #[arg(long)]
    full_scale: bool,
    #[arg(long)]
    height: Option<usize>,
    #[arg(long)]
    width: Option<usize>,
    #[arg(long)]
    ellipses: Option<usize>,
    #[arg(long)]
    texture_amplitude: Option<f64>,
    #[arg(long)]
    texture_scale: Option<f64>,
    #[arg(long)]
    coils: Option<usize>,
    /// 4 or 8.
    #[arg(long)]
    acceleration: Option<u32>,
    /// random or equispaced.
    #[arg(long, value_parser = parse_mask_kind)]
    mask_kind: Option<MaskKind>,
    #[arg(long)]
    center_fraction: Option<f64>,
    /// Defaults to the phantom seed.
    #[arg(long)]
    mask_seed: Option<u64>,
    /// Noise level relative to the measurement's RMS.
    #[arg(long)]
    noise: Option<f64>,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhantomFile {
    pub seed: Option<u64>,
    pub full_scale: Option<bool>,
    pub height: Option<usize>,
    pub width: Option<usize>,
    pub ellipses: Option<usize>,
    pub texture_amplitude: Option<f64>,
    pub texture_scale: Option<f64>,
    pub coils: Option<usize>,
    pub acceleration: Option<u32>,
    pub mask_kind: Option<MaskKind>,
    pub center_fraction: Option<f64>,
    pub mask_seed: Option<u64>,
    pub noise: Option<f64>,
}

#[derive(Clone, Debug, Serialize)]
struct PhantomSettings {
    phantom: PhantomSpec,
    coils: usize,
    mask: MaskSpec,
    noise: f64,
    noise_seed: u64,
}

pub fn phantom(a: PhantomArgs) -> Result<(), CliError> {
    let start = Instant::now();
    let file: PhantomFile = match &a.config {
        Some(p) => config::read_json(p)?,
        None => PhantomFile::default(),
    };
    let seed = seed_or_env(a.seed, file.seed)?;
    let mut spec = if a.full_scale || file.full_scale.unwrap_or(false) {
        PhantomSpec::full_scale(seed)
    } else {
        PhantomSpec::desk(seed)
    };
    spec.height = a.height.or(file.height).unwrap_or(spec.height);
    spec.width = a.width.or(file.width).unwrap_or(spec.width);
    spec.n_ellipses = a.ellipses.or(file.ellipses).unwrap_or(spec.n_ellipses);
    spec.texture_amplitude = a.texture_amplitude.or(file.texture_amplitude).unwrap_or(spec.texture_amplitude);
    spec.texture_scale = a.texture_scale.or(file.texture_scale).unwrap_or(spec.texture_scale);
    let accel = a.acceleration.or(file.acceleration).unwrap_or(4);
    let mut mask = MaskSpec::standard(spec.width, accel, a.mask_seed.or(file.mask_seed).unwrap_or(seed));
    mask.kind = a.mask_kind.or(file.mask_kind).unwrap_or(mask.kind);
    mask.center_fraction = a.center_fraction.or(file.center_fraction).unwrap_or(mask.center_fraction);
    let settings = PhantomSettings {
        coils: a.coils.or(file.coils).unwrap_or(phantom::DESK_COILS),
        noise: a.noise.or(file.noise).unwrap_or(phantom::DESK_NOISE),
        noise_seed: seed.wrapping_add(1),
        phantom: spec,
        mask,
    };
    settings.phantom.validate()?;
    settings.mask.validate()?;
    if settings.coils == 0 {
        return Err(CliError::config("coils must be at least 1"));
    }
    if !(settings.noise >= 0.0) {
        return Err(CliError::config("noise must be non-negative"));
    }

    let p = phantom::make_problem(&settings.phantom, settings.coils, &settings.mask, settings.noise)?;
    create_dir(&a.out)?;
    let files = [
        ("phantom", "phantom.umri", Array::from_complex_grid(&p.phantom.image)),
        ("maps", "maps.umri", Array::from_complex_grids(p.maps.maps())?),
        ("mask", "mask.umri", io::mask_to_array(&p.mask)?),
        ("kspace", "kspace.umri", Array::from_complex_grids(p.measurement.coils())?),
    ];
    let mut outputs = serde_json::Map::new();
    for (key, name, array) in &files {
        io::write_array(&a.out.join(name), array)?;
        outputs.insert(key.to_string(), json!(name));
    }
    let manifest = json!({
        "command": "phantom",
        "config": settings,
        "outputs": outputs,
        "seeds": {
            "phantom": settings.phantom.seed,
            "mask": settings.mask.seed,
            "noise": settings.noise_seed,
        },
        "mask": {
            "width": p.mask.width(),
            "sampled_columns": p.mask.num_sampled(),
            "center_columns": p.mask.center_band().len(),
            "acceleration": p.mask.acceleration(),
        },
        "support_area": p.phantom.support_area(),
        "run": run_info(start),
    });
    write_json(&a.out.join("manifest.json"), &manifest)
}

// ---------------------------------------------------------------- recon

#[derive(Args, Debug)]
pub struct ReconArgs {
    #[command(flatten)]
    inputs: Inputs,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum)]
    method: Option<Method>,
    /// JSON settings file, for example one written by `autotune`.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Ground truth; metrics.json is written when given.
    #[arg(long)]
    gt: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Fit one image through the sensitivity maps (needs --maps).
    #[arg(long)]
    sens: bool,
    /// Number of independently seeded fits to average.
    #[arg(long)]
    ensemble: Option<usize>,
    /// Parameter file to start the fit from.
    #[arg(long)]
    warm_start: Option<PathBuf>,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    channels: Option<usize>,
    /// Spatial size of the random input, HxW.
    #[arg(long, value_parser = parse_hw)]
    input_hw: Option<[usize; 2]>,
    /// TV weight.
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    tv_iters: Option<usize>,
    /// Record the loss every N iterations.
    #[arg(long)]
    loss_every: Option<usize>,
    /// Write fitted parameters here.
    #[arg(long)]
    save_params: Option<PathBuf>,
    /// Write the loss trace as CSV here.
    #[arg(long)]
    loss_csv: Option<PathBuf>,
    #[arg(long)]
    norm: Option<Normalization>,
    #[arg(long)]
    eval_mode: Option<EvaluationMode>,
}

pub fn recon(a: ReconArgs) -> Result<(), CliError> {
    let start = Instant::now();
    let file: ReconFile = match &a.config {
        Some(p) => config::read_json(p)?,
        None => ReconFile::default(),
    };
    let Loaded { y, maps } = load_inputs(&a.inputs)?;
    let (h, w) = y.dims();
    let flags = ReconFlags {
        method: a.method,
        seed: a.seed,
        sens: a.sens,
        iterations: a.iters,
        lr: a.lr,
        ensemble: a.ensemble,
        loss_every: a.loss_every,
        layers: a.layers,
        channels: a.channels,
        input_hw: a.input_hw,
        lambda: a.lambda,
        tv_iterations: a.tv_iters,
        normalization: a.norm,
        evaluation_mode: a.eval_mode,
    };
    let s = config::resolve(&flags, &file, [h, w])?;
    if s.sens && maps.is_none() {
        return Err(CliError::config("--sens needs --maps"));
    }
    let is_decoder = s.method.architecture().is_some();
    if !is_decoder && (a.warm_start.is_some() || a.save_params.is_some() || a.loss_csv.is_some()) {
        return Err(CliError::config(
            "--warm-start, --save-params and --loss-csv apply only to decoder methods",
        ));
    }
    if s.ensemble > 1 && (a.warm_start.is_some() || a.save_params.is_some() || a.loss_csv.is_some()) {
        return Err(CliError::config(
            "--warm-start, --save-params and --loss-csv need a single fit (--ensemble 1)",
        ));
    }
    let gt = a.gt.as_deref().map(read_single).transpose()?;
    create_dir(&a.out)?;

    let fit_maps = if s.sens { maps.as_ref() } else { None };
    let mut fit_info = json!(null);
    let mut seeds = vec![s.seed];
    let image = match s.method {
        Method::ZeroFill => zero_filled(&y)?,
        Method::Tv => tv_reconstruct(&y, maps.as_ref(), &s.tv)?,
        Method::Convdecoder | Method::Deepdecoder => {
            let decoder = s.decoder_config([h, w], y.num_coils()).expect("decoder method");
            let fit = s.fit_config(y.num_coils());
            if s.ensemble == 1 {
                let state = match &a.warm_start {
                    Some(p) => load_params::<f32>(&decoder, p)?,
                    None => DecoderState::init(&decoder)?,
                };
                let r = reconstruct_from(state, &y, fit_maps, &fit)?;
                if let Some(p) = &a.save_params {
                    save_params(&r.state, p)?;
                }
                if let Some(p) = &a.loss_csv {
                    write_text(p, &r.fit.loss_csv())?;
                }
                fit_info = json!({ "final_losses": [r.fit.final_loss()] });
                r.image
            } else {
                seeds = member_seeds(s.seed, s.ensemble);
                let e = ensemble_reconstruct(&y, fit_maps, &decoder, &fit, &seeds)?;
                fit_info = json!({ "final_losses": e.final_losses });
                e.image
            }
        }
    };
    io::write_array(&a.out.join("recon.umri"), &Array::from_real_grid(&image))?;
    let mut outputs = json!({ "recon": "recon.umri" });
    if let Some(gt) = &gt {
        let report = evaluate(&[image.clone()], &[gt.clone()], s.normalization, s.evaluation_mode)?;
        write_json(&a.out.join("metrics.json"), &report)?;
        outputs["metrics"] = json!("metrics.json");
    }
    let manifest = json!({
        "command": "recon",
        "config": s,
        "inputs": {
            "kspace": a.inputs.kspace,
            "mask": a.inputs.mask,
            "maps": a.inputs.maps,
            "gt": a.gt,
            "warm_start": a.warm_start,
            "config": a.config,
        },
        "outputs": outputs,
        "member_seeds": if is_decoder { json!(seeds) } else { json!([]) },
        "fit": fit_info,
        "run": run_info(start),
    });
    write_json(&a.out.join("manifest.json"), &manifest)
}

// ---------------------------------------------------------------- autotune

#[derive(Args, Debug)]
pub struct AutotuneArgs {
    #[command(flatten)]
    inputs: Inputs,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// JSON list of {"n_layers", "channels", "sens"} entries.
    #[arg(long)]
    grid: Option<PathBuf>,
    /// Layer counts for a product grid (with --grid-channels).
    #[arg(long, value_delimiter = ',')]
    grid_layers: Vec<usize>,
    #[arg(long, value_delimiter = ',')]
    grid_channels: Vec<usize>,
    /// Keep only grid entries without sensitivity maps.
    #[arg(long)]
    no_sens: bool,
    #[arg(long, value_parser = parse_arch, default_value = "convdecoder")]
    arch: Architecture,
    #[arg(long, value_parser = parse_hw)]
    input_hw: Option<[usize; 2]>,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Fraction of candidate k-space held out per fold.
    #[arg(long, default_value_t = tune::DEFAULT_HOLDOUT_FRACTION)]
    q: f64,
    #[arg(long, default_value_t = tune::DEFAULT_FOLDS)]
    folds: usize,
    /// columns or samples.
    #[arg(long, value_parser = parse_holdout, default_value = "columns")]
    holdout: HoldoutKind,
}

pub fn autotune(a: AutotuneArgs) -> Result<(), CliError> {
    let start = Instant::now();
    let Loaded { y, maps } = load_inputs(&a.inputs)?;
    let (h, w) = y.dims();
    let mut grid: Vec<HyperConfig> = match (&a.grid, a.grid_layers.is_empty(), a.grid_channels.is_empty()) {
        (Some(p), true, true) => config::read_json(p)?,
        (None, true, true) => tune::full_scale_grid(),
        (None, false, false) => tune::grid(&a.grid_layers, &a.grid_channels),
        _ => {
            return Err(CliError::usage(
                "give either --grid or both --grid-layers and --grid-channels",
            ))
        }
    };
    if a.no_sens {
        grid.retain(|g| !g.sens);
    }
    if grid.is_empty() {
        return Err(CliError::config("hyper-parameter grid is empty"));
    }
    if maps.is_none() && grid.iter().any(|g| g.sens) {
        return Err(CliError::config("grid entries with sens need --maps (or pass --no-sens)"));
    }
    let seed = seed_or_env(a.seed, None)?;
    let mut base = TuneBase::desk([h, w], a.iters.unwrap_or(DEFAULT_ITERATIONS), seed);
    base.arch = a.arch;
    base.lr = a.lr.unwrap_or(DEFAULT_LR);
    if let Some(hw) = a.input_hw {
        base.input_hw = hw;
    }
    let settings = TuneSettings { q: a.q, folds: a.folds, kind: a.holdout, seed };
    let (best, rows) = tune::autotune(&grid, &y, maps.as_ref(), &base, &settings)?;

    create_dir(&a.out)?;
    write_json(&a.out.join("scores.json"), &rows)?;
    let chosen = ReconFile {
        method: Some(match base.arch {
            Architecture::ConvDecoder => Method::Convdecoder,
            Architecture::DeepDecoder => Method::Deepdecoder,
        }),
        seed: Some(seed),
        sens: Some(best.sens),
        iterations: Some(base.iterations),
        lr: Some(base.lr),
        decoder: Some(DecoderFile {
            n_layers: Some(best.n_layers),
            channels: Some(best.channels),
            input_hw: Some(base.input_hw),
            schedule: Some(base.schedule),
        }),
        ..ReconFile::default()
    };
    write_json(&a.out.join("chosen_config.json"), &chosen)?;
    let manifest = json!({
        "command": "autotune",
        "config": { "base": base, "settings": settings, "grid": grid },
        "inputs": { "kspace": a.inputs.kspace, "mask": a.inputs.mask, "maps": a.inputs.maps, "grid": a.grid },
        "outputs": { "scores": "scores.json", "chosen_config": "chosen_config.json" },
        "chosen": best,
        "run": run_info(start),
    });
    write_json(&a.out.join("manifest.json"), &manifest)
}

// ---------------------------------------------------------------- eval

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Reconstructed images or volumes, concatenated in order.
    #[arg(long, num_args = 1.., required = true)]
    recon: Vec<PathBuf>,
    /// Ground-truth images or volumes, matching --recon.
    #[arg(long, num_args = 1.., required = true)]
    gt: Vec<PathBuf>,
    #[arg(long, default_value = "meanstd_gt")]
    norm: Normalization,
    #[arg(long, default_value = "image")]
    mode: EvaluationMode,
    /// Write the report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn eval(a: EvalArgs) -> Result<(), CliError> {
    let mut recon = Vec::new();
    for p in &a.recon {
        recon.extend(read_slices(p)?);
    }
    let mut gt = Vec::new();
    for p in &a.gt {
        gt.extend(read_slices(p)?);
    }
    let report = evaluate(&recon, &gt, a.norm, a.mode)?;
    match &a.out {
        Some(p) => write_json(p, &report),
        None => {
            let text = serde_json::to_string_pretty(&report).map_err(|e| CliError::new("internal", e.to_string()))?;
            match writeln!(std::io::stdout().lock(), "{text}") {
                Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(CliError::io(Path::new("<stdout>"), e)),
                _ => Ok(()),
            }
        }
    }
}
