//! Command-line front end: synthetic textures, training, seed optimisation,
//! inpainting, validation, the seed probe and the HTTP service.

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{Error, Result};
use crate::image::{load_micrograph, save_png, ImageKind, KindHint, Micrograph, Region, DEFAULT_ANNULUS};
use crate::metrics::{
    baseline_fill, border_contiguity, ground_truth_fractions, fixed_seed_fractions, random_seed_fractions,
    region_fractions, seed_propagation_probe, BaselineKind, ContiguityReport, InpaintMethod, InpaintResult, VfReport,
};
use crate::models::{load_bundle, save_bundle, ArchConfig, Method, ModelBundle};
use crate::service::{self, AppState, BIND_ENV, DATA_DIR_ENV};
use crate::synth::{synth_texture, SynthConfig};
use crate::train::{
    evaluate_gopt, evaluate_zopt, optimize_seed, read_config, train_gopt, train_wgan, CancelToken, JsonLinesObserver,
    Lipschitz, SeedMode, TrainingConfig, ZOptConfig,
};
use crate::image::Augmentation;

#[derive(Parser, Debug)]
#[command(name = "microinpaint", version, about = "Inpaint occluded regions of micrographs")]
pub struct Cli {
    /// Log filter (error, warn, info, debug, trace).
    #[arg(long, global = true, default_value = "info")]
    pub log_level: String,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Write a synthetic multi-phase blob texture.
    Synth(SynthArgs),
    /// Train a generator.
    Train(TrainArgs),
    /// Optimise a seed for a region with a plain adversarial bundle.
    Zopt(ZoptArgs),
    /// Inpaint the region of a G-opt bundle.
    Inpaint(InpaintArgs),
    /// Score an inpainted image against its original.
    Validate(ValidateArgs),
    /// Profile how far a seed change propagates through a generator.
    Probe(ProbeArgs),
    /// Run the HTTP service.
    Serve(ServeArgs),
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 256)]
    pub size: usize,
    /// Comma-separated phase fractions.
    #[arg(long, value_delimiter = ',', default_values_t = [0.3, 0.3, 0.4])]
    pub fractions: Vec<f64>,
    #[arg(long, default_value_t = 4.0)]
    pub blob_sigma: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(short, long)]
    pub output: PathBuf,
}

#[derive(Args, Debug, Clone)]
pub struct ImageArgs {
    #[arg(long)]
    pub image: PathBuf,
    /// Override image type detection (nphase, grayscale, colour).
    #[arg(long)]
    pub kind: Option<KindHint>,
}

impl ImageArgs {
    fn load(&self) -> Result<Micrograph> {
        load_micrograph(&self.image, self.kind)
    }
}

#[derive(Args, Debug, Clone, Default)]
pub struct RegionArgs {
    /// Rectangle `x,y,w,h`.
    #[arg(long, value_delimiter = ',', conflicts_with_all = ["polygon", "region"])]
    pub rect: Option<Vec<usize>>,
    /// Polygon vertices `x,y;x,y;...`.
    #[arg(long, conflicts_with = "region")]
    pub polygon: Option<String>,
    /// Region JSON, inline or a file path.
    #[arg(long)]
    pub region: Option<String>,
    #[arg(long, default_value_t = DEFAULT_ANNULUS)]
    pub annulus: usize,
}

impl RegionArgs {
    fn parse(&self) -> Result<Option<Region>> {
        let mut region = if let Some(r) = &self.rect {
            let [x, y, w, h] = r[..] else {
                return Err(Error::InvalidRegion("--rect takes x,y,w,h".into()));
            };
            Region::rect(x, y, w, h)?
        } else if let Some(p) = &self.polygon {
            Region::polygon(parse_vertices(p)?)?
        } else if let Some(spec) = &self.region {
            let text = if Path::new(spec).is_file() {
                std::fs::read_to_string(spec).map_err(|e| Error::io(spec, e))?
            } else {
                spec.clone()
            };
            return Region::from_json(&text).map(Some);
        } else {
            return Ok(None);
        };
        region.annulus_width = self.annulus;
        region.check_shape()?;
        Ok(Some(region))
    }

    fn require(&self) -> Result<Region> {
        self.parse()?.ok_or_else(|| Error::InvalidRegion("a region is required (--rect, --polygon or --region)".into()))
    }
}

fn parse_vertices(s: &str) -> Result<Vec<[i64; 2]>> {
    s.split(';')
        .filter(|p| !p.trim().is_empty())
        .map(|p| {
            let xy: Vec<i64> = p
                .split(',')
                .map(|v| v.trim().parse::<i64>().map_err(|e| Error::InvalidRegion(format!("vertex {p:?}: {e}"))))
                .collect::<Result<_>>()?;
            match xy[..] {
                [x, y] => Ok([x, y]),
                _ => Err(Error::InvalidRegion(format!("vertex {p:?} must be x,y"))),
            }
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum AugmentationArg {
    None,
    FlipsAndRot90,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SeedModeArg {
    KlAnchor,
    Renormalize,
    Unconstrained,
}

/// Overrides for [`TrainingConfig`] and [`ArchConfig`] fields.
#[derive(Args, Debug, Clone, Default)]
pub struct TrainFlags {
    #[arg(long)]
    pub content_coeff: Option<f64>,
    #[arg(long)]
    pub gp_weight: Option<f64>,
    #[arg(long)]
    pub critic_per_g: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    /// Adam betas `b1,b2`.
    #[arg(long, value_delimiter = ',')]
    pub adam_betas: Option<Vec<f64>>,
    #[arg(long)]
    pub i_max: Option<usize>,
    #[arg(long)]
    pub snapshot_every: Option<usize>,
    /// Keep the critic Lipschitz by clipping its parameters to this bound
    /// instead of the gradient penalty.
    #[arg(long)]
    pub weight_clip: Option<f64>,
    #[arg(long)]
    pub augmentation: Option<AugmentationArg>,
    #[arg(long)]
    pub latent_depth: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    pub gen_channels: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    pub critic_channels: Option<Vec<usize>>,
    #[arg(long)]
    pub init_std: Option<f64>,
    /// Divide every default hidden width by this factor.
    #[arg(long)]
    pub narrow: Option<usize>,
}

#[derive(Args, Debug, Clone, Default)]
pub struct ZoptFlags {
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub seed_lr: Option<f64>,
    #[arg(long)]
    pub kl_weight: Option<f64>,
    #[arg(long)]
    pub mode: Option<SeedModeArg>,
    #[arg(long)]
    pub record_every: Option<usize>,
}

/// Layout of a `--config` file (TOML or JSON).
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ConfigFile {
    pub training: TrainingConfig,
    pub arch: ArchConfig,
    pub zopt: ZOptConfig,
}

fn load_config(path: Option<&Path>) -> Result<ConfigFile> {
    path.map_or_else(|| Ok(ConfigFile::default()), read_config)
}

impl TrainFlags {
    fn apply(&self, cfg: &mut TrainingConfig, arch: &mut ArchConfig) -> Result<()> {
        if let Some(f) = self.narrow {
            *arch = ArchConfig { latent_depth: arch.latent_depth, init_std: arch.init_std, ..ArchConfig::narrowed(f) };
        }
        macro_rules! set {
            ($($field:ident => $target:expr),*) => {$(if let Some(v) = self.$field.clone() { $target = v; })*};
        }
        set!(content_coeff => cfg.content_coeff, gp_weight => cfg.gp_weight, critic_per_g => cfg.critic_per_g,
             batch_size => cfg.batch_size, learning_rate => cfg.learning_rate, i_max => cfg.i_max,
             snapshot_every => cfg.snapshot_every, latent_depth => arch.latent_depth,
             critic_channels => arch.critic_channels, init_std => arch.init_std);
        if let Some(b) = &self.adam_betas {
            let [b1, b2] = b[..] else {
                return Err(Error::Config("--adam-betas takes two values".into()));
            };
            cfg.adam_betas = (b1, b2);
        }
        if let Some(c) = &self.gen_channels {
            arch.gen_channels = c[..].try_into().map_err(|_| Error::Config("--gen-channels takes three widths".into()))?;
        }
        if let Some(clip) = self.weight_clip {
            cfg.lipschitz = Lipschitz::WeightClip { clip };
        }
        if let Some(a) = self.augmentation {
            cfg.augmentation = match a {
                AugmentationArg::None => Augmentation::None,
                AugmentationArg::FlipsAndRot90 => Augmentation::FlipsAndRot90,
            };
        }
        Ok(())
    }
}

impl ZoptFlags {
    fn apply(&self, cfg: &mut ZOptConfig) {
        if let Some(v) = self.iterations {
            cfg.iterations = v;
        }
        if let Some(v) = self.seed_lr {
            cfg.seed_lr = v;
        }
        if let Some(v) = self.kl_weight {
            cfg.kl_weight = v;
        }
        if let Some(v) = self.record_every {
            cfg.record_every = v;
        }
        if let Some(m) = self.mode {
            cfg.mode = match m {
                SeedModeArg::KlAnchor => SeedMode::KlAnchor,
                SeedModeArg::Renormalize => SeedMode::Renormalize,
                SeedModeArg::Unconstrained => SeedMode::Unconstrained,
            };
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum TrainMethod {
    Gopt,
    Wgan,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    pub method: TrainMethod,
    #[command(flatten)]
    pub image: ImageArgs,
    #[command(flatten)]
    pub region: RegionArgs,
    #[command(flatten)]
    pub flags: TrainFlags,
    /// TOML or JSON file with `training` and `arch` sections.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Bundle file to write.
    #[arg(short, long)]
    pub output: PathBuf,
    /// JSON-lines training log (default: the output path with `.jsonl`).
    #[arg(long)]
    pub log: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ZoptArgs {
    #[arg(long)]
    pub bundle: PathBuf,
    #[command(flatten)]
    pub image: ImageArgs,
    #[command(flatten)]
    pub region: RegionArgs,
    #[command(flatten)]
    pub flags: ZoptFlags,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Inpainted PNG to write.
    #[arg(short, long)]
    pub output: PathBuf,
    #[arg(long)]
    pub log: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct InpaintArgs {
    #[arg(long)]
    pub bundle: PathBuf,
    #[command(flatten)]
    pub image: ImageArgs,
    /// Number of centre resamples; 0 uses the fixed seed as trained.
    #[arg(long, default_value_t = 0)]
    pub resample: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output PNG; resamples are numbered `<stem>_<i>.png`.
    #[arg(short, long)]
    pub output: PathBuf,
}

#[derive(Args, Debug)]
pub struct ValidateArgs {
    #[arg(long)]
    pub original: PathBuf,
    #[arg(long)]
    pub inpainted: PathBuf,
    #[arg(long)]
    pub kind: Option<KindHint>,
    #[command(flatten)]
    pub region: RegionArgs,
    /// Also score zeros, uniform-noise and (with --bundle) random-seed fills.
    #[arg(long)]
    pub baselines: bool,
    /// Trained bundle for the random-seed baseline and generator VF samples.
    #[arg(long)]
    pub bundle: Option<PathBuf>,
    #[arg(long, default_value_t = 128)]
    pub vf_samples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Report path (default stdout).
    #[arg(short, long)]
    pub output: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ProbeArgs {
    #[arg(long)]
    pub bundle: PathBuf,
    #[arg(long, default_value_t = 16)]
    pub seed_size: usize,
    #[arg(long, default_value_t = 3)]
    pub max_block: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// CSV path (default stdout).
    #[arg(short, long)]
    pub output: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ServeArgs {
    #[arg(long, env = BIND_ENV, default_value = "127.0.0.1:8080")]
    pub bind: String,
    #[arg(long, env = DATA_DIR_ENV, default_value = "microinpaint-data")]
    pub data_dir: PathBuf,
}

/// Parse arguments, run and map the outcome to an exit code: 0 success,
/// 1 runtime error, 2 usage or validation error.
pub fn main_with_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    init_logging(&cli.log_level);
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            ExitCode::from(if e.is_validation() { 2 } else { 1 })
        }
    }
}

fn init_logging(level: &str) {
    let _ = env_logger::Builder::new()
        .parse_filters(level)
        .format(|buf, record| {
            let line = json!({
                "ts": buf.timestamp_millis().to_string(),
                "level": record.level().as_str(),
                "target": record.target(),
                "msg": record.args().to_string(),
            });
            writeln!(buf, "{line}")
        })
        .try_init();
}

pub fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Synth(a) => cmd_synth(a),
        Command::Train(a) => cmd_train(a),
        Command::Zopt(a) => cmd_zopt(a),
        Command::Inpaint(a) => cmd_inpaint(a),
        Command::Validate(a) => cmd_validate(a),
        Command::Probe(a) => cmd_probe(a),
        Command::Serve(a) => cmd_serve(a),
    }
}

fn print_json(v: &serde_json::Value) {
    emit(&format!("{}\n", serde_json::to_string_pretty(v).expect("json")));
}

/// Write to stdout; a closed pipe (e.g. `| head`) is not an error.
fn emit(text: &str) {
    let mut out = std::io::stdout().lock();
    if let Err(e) = out.write_all(text.as_bytes()).and_then(|()| out.flush()) {
        if e.kind() != std::io::ErrorKind::BrokenPipe {
            log::error!("writing stdout: {e}");
        }
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

/// Cancel `token` on ctrl-c, so training stops with a partial bundle.
fn cancel_on_ctrl_c(token: CancelToken) {
    std::thread::spawn(move || {
        let rt = tokio::runtime::Builder::new_current_thread().enable_all().build();
        if let Ok(rt) = rt {
            if rt.block_on(tokio::signal::ctrl_c()).is_ok() {
                log::warn!("interrupted; finishing with a partial result");
                token.cancel();
            }
        }
    });
}

fn cmd_synth(a: SynthArgs) -> Result<()> {
    let cfg = SynthConfig { size: a.size, fractions: a.fractions, blob_sigma: a.blob_sigma };
    let img = synth_texture(&cfg, &mut ChaCha8Rng::seed_from_u64(a.seed))?;
    save_png(&img, &a.output)?;
    print_json(&json!({ "v": 1, "output": a.output, "size": a.size, "fractions": cfg.fractions }));
    Ok(())
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let file = load_config(a.config.as_deref())?;
    let (mut cfg, mut arch) = (file.training, file.arch);
    a.flags.apply(&mut cfg, &mut arch)?;
    cfg.validate()?;
    let img = a.image.load()?;
    let region = a.region.parse()?;
    let log_path = a.log.clone().unwrap_or_else(|| a.output.with_extension("jsonl"));
    let token = CancelToken::new();
    cancel_on_ctrl_c(token.clone());
    let mut obs = JsonLinesObserver::new(create(&log_path)?).with_cancel(token);
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let bundle = match a.method {
        TrainMethod::Gopt => {
            let region = region.ok_or_else(|| Error::InvalidRegion("G-opt training needs a rectangle (--rect)".into()))?;
            train_gopt(&img, &region, &cfg, &arch, &mut rng, &mut obs)?
        }
        TrainMethod::Wgan => train_wgan(&img, region.as_ref(), &cfg, &arch, &mut rng, &mut obs)?,
    };
    drop(obs);
    save_bundle(&bundle, &a.output)?;
    print_json(&json!({
        "v": 1,
        "bundle": a.output,
        "log": log_path,
        "digest": bundle.digest(),
        "iterations": bundle.iterations,
        "partial": bundle.partial,
    }));
    Ok(())
}

fn contiguity_summary(c: &ContiguityReport) -> serde_json::Value {
    json!({
        "ks_statistic": c.ks_statistic,
        "p_value": c.p_value,
        "border_pairs": c.border_sq_diffs.len(),
        "reference_pairs": c.reference_sq_diffs.len(),
        "reference_total": c.reference_total,
    })
}

fn result_summary(r: &InpaintResult, original: &Micrograph, path: &Path) -> serde_json::Value {
    let contiguity = border_contiguity(r, original).ok();
    json!({
        "output": path,
        "method": r.method,
        "seed_digest": r.seed_digest,
        "warning": r.warning,
        "paste_audit": r.paste_audit(original),
        "contiguity": contiguity.as_ref().map(contiguity_summary),
    })
}

fn cmd_zopt(a: ZoptArgs) -> Result<()> {
    let mut cfg = load_config(a.config.as_deref())?.zopt;
    a.flags.apply(&mut cfg);
    cfg.validate()?;
    let img = a.image.load()?;
    let region = a.region.require()?;
    let bundle = load_bundle(&a.bundle)?;
    if bundle.method != Method::Wgan {
        return Err(Error::Config("seed optimisation needs a bundle trained with `train wgan`".into()));
    }
    let log_path = a.log.clone().unwrap_or_else(|| a.output.with_extension("jsonl"));
    let token = CancelToken::new();
    cancel_on_ctrl_c(token.clone());
    let mut obs = JsonLinesObserver::new(create(&log_path)?).with_cancel(token);
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let (z, trace) = optimize_seed(&bundle, &img, &region, &cfg, &mut rng, &mut obs)?;
    drop(obs);
    let result = evaluate_zopt(&bundle, &z, &img, &region)?;
    save_png(&result.image, &a.output)?;
    let (mean, std) = (trace.checkpoints.last().map(|c| c.seed_mean), trace.checkpoints.last().map(|c| c.seed_std));
    print_json(&json!({
        "v": 1,
        "result": result_summary(&result, &img, &a.output),
        "initial_mse": trace.initial_mse,
        "best_mse": trace.best_mse,
        "best_iteration": trace.best_iteration,
        "final_seed_mean": mean,
        "final_seed_std": std,
        "diverged": trace.diverged,
        "stopped": trace.stopped,
        "log": log_path,
    }));
    Ok(())
}

fn numbered(path: &Path, i: usize) -> PathBuf {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("inpaint");
    let ext = path.extension().and_then(|s| s.to_str()).unwrap_or("png");
    path.with_file_name(format!("{stem}_{i}.{ext}"))
}

fn cmd_inpaint(a: InpaintArgs) -> Result<()> {
    let bundle = load_bundle(&a.bundle)?;
    if bundle.method != Method::Gopt {
        return Err(Error::Config("this bundle has no fixed seed; inpaint it with `zopt`".into()));
    }
    let img = a.image.load()?;
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let mut outputs = Vec::new();
    if a.resample == 0 {
        let r = evaluate_gopt(&bundle, &img, false, &mut rng)?;
        save_png(&r.image, &a.output)?;
        outputs.push(result_summary(&r, &img, &a.output));
    }
    for i in 1..=a.resample {
        let r = evaluate_gopt(&bundle, &img, true, &mut rng)?;
        let path = numbered(&a.output, i);
        save_png(&r.image, &path)?;
        outputs.push(result_summary(&r, &img, &path));
    }
    print_json(&json!({ "v": 1, "outputs": outputs }));
    Ok(())
}

fn fraction_stats(samples: &[Vec<f64>]) -> serde_json::Value {
    let n = samples.first().map_or(0, Vec::len);
    let col = |p: usize| samples.iter().map(move |s| s[p]);
    json!((0..n)
        .map(|p| json!({
            "mean": VfReport::mean(samples, p),
            "min": col(p).fold(f64::INFINITY, f64::min),
            "max": col(p).fold(f64::NEG_INFINITY, f64::max),
        }))
        .collect::<Vec<_>>())
}

fn cmd_validate(a: ValidateArgs) -> Result<()> {
    let original = load_micrograph(&a.original, a.kind)?;
    let inpainted = load_micrograph(&a.inpainted, a.kind)?;
    let region = a.region.require()?;
    region.validate(original.width(), original.height())?;
    if (inpainted.width(), inpainted.height(), inpainted.kind()) != (original.width(), original.height(), original.kind()) {
        return Err(Error::Shape("inpainted image does not match the original's size and type".into()));
    }
    let bundle = a.bundle.as_ref().map(load_bundle).transpose()?;
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let wrap = |image: Micrograph, method| InpaintResult { image, region: region.clone(), method, seed_digest: None, warning: None };

    let scored = wrap(inpainted, InpaintMethod::Gopt);
    let mut report = json!({
        "v": 1,
        "paste_audit": scored.paste_audit(&original),
        "contiguity": contiguity_summary(&border_contiguity(&scored, &original)?),
        "ground_truth": contiguity_summary(&border_contiguity(&wrap(original.clone(), InpaintMethod::GroundTruth), &original)?),
    });
    if a.baselines {
        let mut kinds = vec![("zeros", BaselineKind::Zeros), ("uniform_noise", BaselineKind::UniformNoise)];
        if bundle.is_some() {
            kinds.push(("random_seed", BaselineKind::RandomSeed));
        }
        let mut baselines = serde_json::Map::new();
        for (name, kind) in kinds {
            let fill = baseline_fill(&original, &region, kind, bundle.as_ref(), &mut rng)?;
            baselines.insert(name.into(), contiguity_summary(&border_contiguity(&fill, &original)?));
        }
        report["baselines"] = baselines.into();
    }
    if let ImageKind::NPhase { .. } = original.kind() {
        let core = region.core();
        let gt = ground_truth_fractions(&original, Some(&region), core.w.max(core.h), a.vf_samples, &mut rng)?;
        let mut vf = json!({
            "inpainted_region": region_fractions(&scored.image, &region)?,
            "ground_truth": fraction_stats(&gt),
        });
        if let Some(b) = bundle.as_ref() {
            let random = random_seed_fractions(b, core.w, core.h, a.vf_samples, &mut rng)?;
            let fixed = match b.method {
                Method::Gopt => Some(fixed_seed_fractions(b, &original, a.vf_samples, &mut rng)?),
                Method::Wgan => None,
            };
            vf["random_seed"] = fraction_stats(&random);
            if let Some(f) = &fixed {
                vf["fixed_seed"] = fraction_stats(f);
            }
            let r = VfReport::new(gt, random, fixed)?;
            vf["random_p_values"] = json!(r.random_p_values);
            vf["fixed_p_values"] = json!(r.fixed_p_values);
        }
        report["vf"] = vf;
    }
    let text = serde_json::to_string_pretty(&report).expect("json");
    match &a.output {
        Some(p) => std::fs::write(p, text).map_err(|e| Error::io(p, e)),
        None => {
            emit(&format!("{text}\n"));
            Ok(())
        }
    }
}

fn cmd_probe(a: ProbeArgs) -> Result<()> {
    let bundle: ModelBundle = load_bundle(&a.bundle)?;
    let profile = seed_propagation_probe(&bundle, a.seed_size, a.max_block, &mut ChaCha8Rng::seed_from_u64(a.seed))?;
    log::info!("affected widths per block: {:?}", profile.widths);
    let csv = profile.to_csv();
    match &a.output {
        Some(p) => std::fs::write(p, csv).map_err(|e| Error::io(p, e)),
        None => {
            emit(&csv);
            Ok(())
        }
    }
}

fn cmd_serve(a: ServeArgs) -> Result<()> {
    let rt = tokio::runtime::Runtime::new().map_err(|e| Error::Other(format!("cannot start runtime: {e}")))?;
    rt.block_on(async {
        let state = AppState::open(&a.data_dir)?;
        let listener = tokio::net::TcpListener::bind(&a.bind)
            .await
            .map_err(|e| Error::Other(format!("cannot bind {}: {e}", a.bind)))?;
        log::info!("listening on {}", listener.local_addr().map_or(a.bind.clone(), |s| s.to_string()));
        let shutdown = async {
            let _ = tokio::signal::ctrl_c().await;
        };
        service::serve(listener, state, shutdown).await.map_err(|e| Error::Other(e.to_string()))
    })
}
