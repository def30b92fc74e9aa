//! Subcommand implementations.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use objman::datagen::{crossing_sequence, export_dataset, generate_sequence, load_dataset, DatasetItem};
use objman::evalkit::{identity_switch_count, latent_traversal_grid, manipulate as edit_scene, mean_iou, random_delta, tile_grid};
use objman::inpainter::{evaluate_masked_l1, PretrainBatch};
use objman::trainer::{
    load_checkpoint, networks_from_checkpoint, run, Preset, RunDir, TrainConfig, Trainer, HELD_OUT_SEED_OFFSET,
};
use objman::{Error, ImageTensor, MaskStack32, Networks32};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::{CliError, Common};

type Result<T> = std::result::Result<T, CliError>;

/// Sequence seeds sit past the held-out scenes.
const SEQUENCE_SEED_OFFSET: u64 = HELD_OUT_SEED_OFFSET << 1;

fn toml_string(s: &str) -> String {
    format!("{s:?}")
}

fn path_string(p: &Path) -> String {
    toml_string(&p.display().to_string())
}

/// Resolves the configuration; every failure here is a usage error.
fn resolve(common: &Common, base: Option<&str>, flags: Vec<String>) -> Result<TrainConfig> {
    let text = match &common.config {
        Some(p) => fs::read_to_string(p).map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", p.display())))?,
        None => base.unwrap_or_default().to_string(),
    };
    let mut overrides: Vec<String> = Vec::new();
    if let Some(name) = &common.preset {
        let preset: Preset = name.parse().map_err(|e: Error| CliError::Usage(e.to_string()))?;
        overrides.extend(preset.overrides().iter().map(|s| s.to_string()));
    }
    overrides.extend(common.set.iter().cloned());
    if let Some(seed) = common.seed {
        overrides.push(format!("seed={seed}"));
    }
    overrides.extend(flags);
    TrainConfig::from_toml_with_overrides(&text, &overrides).map_err(|e| CliError::Usage(e.to_string()))
}

fn run_dir(common: &Common, config: &TrainConfig) -> Result<RunDir> {
    let dir = RunDir::create(&common.out)?;
    dir.write_config(config)?;
    Ok(dir)
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| CliError::Runtime(Error::io(path, e)))
}

fn load_networks(path: &Path) -> Result<(TrainConfig, Networks32)> {
    let ckpt = load_checkpoint::<f32>(path)?;
    Ok(networks_from_checkpoint(&ckpt)?)
}

fn checkpoint_config(path: &Path) -> Result<String> {
    Ok(load_checkpoint::<f32>(path)?.config)
}

pub fn gen_data(common: &Common, family: Option<String>, count: Option<usize>, assets: Option<PathBuf>) -> Result<()> {
    let mut flags = Vec::new();
    if let Some(f) = family {
        flags.push(format!("data.generator.family={}", toml_string(&f)));
    }
    if let Some(c) = count {
        flags.push(format!("data.count={c}"));
    }
    if let Some(a) = assets {
        flags.push(format!("data.assets={}", path_string(&a)));
    }
    let config = resolve(common, None, flags)?;
    let items = config.data.generate_items(config.seed, 0, config.data.count)?;
    let manifest = export_dataset(&items, &common.out)?;
    let p = common.out.join("config.resolved");
    write(&p, &config.to_toml())?;
    println!("wrote {} scenes to {}", manifest.items.len(), common.out.display());
    Ok(())
}

pub fn pretrain_inpaint(common: &Common, eval_count: usize) -> Result<()> {
    let flags = ["schedule.warmup_steps=0", "schedule.joint_steps=0"].map(String::from).to_vec();
    let config = resolve(common, None, flags)?;
    if config.schedule.inpainter_checkpoint.is_some() {
        return Err(CliError::Usage("pretrain-inpaint cannot start from schedule.inpainter_checkpoint".into()));
    }
    let dir = run_dir(common, &config)?;
    let data = config.data.training_images(config.seed)?;
    let held: Vec<DatasetItem> = config.data.held_out_items(config.seed, eval_count.max(1))?;
    let held_images: Vec<&ImageTensor> = held.iter().map(|it| &it.image).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ HELD_OUT_SEED_OFFSET);
    let batch = PretrainBatch::<f32>::build(&held_images, &config.pretrain, config.model.edge_threshold, &mut rng)?;

    let (h, w) = (config.data.generator.height, config.data.generator.width);
    let mut trainer = Trainer::<f32>::new(config, h, w)?;
    let before = evaluate_masked_l1(&trainer.nets.inpainter, &batch)?;
    run(&mut trainer, &data, Some(&dir))?;
    let after = evaluate_masked_l1(&trainer.nets.inpainter, &batch)?;
    let reduction = 1.0 - after / before;
    let summary = format!(
        "held-out masked L1 before {before:.6}\nheld-out masked L1 after {after:.6}\nrelative reduction {reduction:.4}\n"
    );
    write(&dir.eval().join("pretrain.txt"), &summary)?;
    print!("{summary}");
    println!("checkpoint {}", dir.final_checkpoint().display());
    Ok(())
}

pub fn train(common: &Common, resume: Option<PathBuf>, inpainter: Option<PathBuf>) -> Result<()> {
    let mut flags = Vec::new();
    if let Some(p) = &inpainter {
        flags.push(format!("schedule.inpainter_checkpoint={}", path_string(p)));
    }
    let base = match &resume {
        Some(p) => Some(checkpoint_config(p)?),
        None => None,
    };
    let config = resolve(common, base.as_deref(), flags)?;
    let dir = run_dir(common, &config)?;
    let checkpoint = match resume {
        Some(path) => {
            let ckpt = load_checkpoint::<f32>(&path)?;
            let (mut trainer, warnings) = Trainer::resume(config.clone(), &ckpt)?;
            for w in warnings {
                eprintln!("{w}");
            }
            let data = config.data.training_images(config.seed)?;
            run(&mut trainer, &data, Some(&dir))?;
            trainer.checkpoint()
        }
        None => {
            let data = config.data.training_images(config.seed)?;
            let outcome = objman::trainer::train::<f32>(config, &data, Some(&dir))?;
            for w in &outcome.warnings {
                eprintln!("{w}");
            }
            outcome.checkpoint
        }
    };
    println!("trained to step {}; checkpoint {}", checkpoint.step, dir.final_checkpoint().display());
    Ok(())
}

fn segment_all(nets: &Networks32, items: &[DatasetItem]) -> Result<Vec<MaskStack32>> {
    Ok(items.iter().map(|it| nets.seg.segment(&it.image)).collect::<objman::Result<_>>()?)
}

pub fn eval_seg(common: &Common, ckpt: &Path, data: Option<PathBuf>, count: usize) -> Result<()> {
    let config = resolve(common, Some(&checkpoint_config(ckpt)?), Vec::new())?;
    let dir = run_dir(common, &config)?;
    let (_, nets) = load_networks(ckpt)?;
    let items = match data {
        Some(d) => load_dataset(&d)?,
        None => config.data.held_out_items(config.seed, count)?,
    };
    if items.is_empty() {
        return Err(CliError::Runtime(Error::Argument("no evaluation scenes".into())));
    }
    let masks = segment_all(&nets, &items)?;
    let mut csv = String::from("id,miou,miou_objects\n");
    let (mut with_bg, mut objects) = (0.0, 0.0);
    for (it, m) in items.iter().zip(&masks) {
        let (score, matched) = mean_iou(m, &it.gt)?;
        let obj = matched.mean_objects_only();
        writeln!(csv, "{},{score},{obj}", it.id).expect("string write");
        with_bg += score;
        objects += obj;
    }
    let n = items.len() as f64;
    let summary = format!(
        "scenes {}\nmIoU (with background) {:.4}\nmIoU (objects only) {:.4}\n",
        items.len(),
        with_bg / n,
        objects / n
    );
    write(&dir.eval().join("miou.csv"), &csv)?;
    write(&dir.eval().join("summary.txt"), &summary)?;
    print!("{summary}");
    Ok(())
}

pub fn eval_identity(common: &Common, ckpt_a: &Path, ckpt_b: &Path, sequences: usize, frames: usize) -> Result<()> {
    if sequences == 0 || frames == 0 {
        return Err(CliError::Usage("--sequences and --frames must be positive".into()));
    }
    let config = resolve(common, Some(&checkpoint_config(ckpt_a)?), Vec::new())?;
    let dir = run_dir(common, &config)?;
    let (_, net_a) = load_networks(ckpt_a)?;
    let (_, net_b) = load_networks(ckpt_b)?;
    let assets = config.data.asset_library()?;
    let mut runs_a = Vec::with_capacity(sequences);
    let mut runs_b = Vec::with_capacity(sequences);
    for i in 0..sequences as u64 {
        let seed = config.seed.wrapping_add(SEQUENCE_SEED_OFFSET + i);
        let spec = crossing_sequence(seed, &config.data.generator, assets.as_ref(), frames)?;
        let rendered = generate_sequence(&spec, &config.data.generator, assets.as_ref())?;
        let (images, gts): (Vec<_>, Vec<_>) = rendered.into_iter().unzip();
        let seg = |nets: &Networks32| images.iter().map(|img| nets.seg.segment(img)).collect::<objman::Result<Vec<_>>>();
        runs_a.push((seg(&net_a)?, gts.clone()));
        runs_b.push((seg(&net_b)?, gts));
    }
    let report_a = identity_switch_count(&runs_a)?;
    let report_b = identity_switch_count(&runs_b)?;
    let mut csv = String::from("sequence,switches_a,switches_b\n");
    for (i, (a, b)) in report_a.per_sequence.iter().zip(&report_b.per_sequence).enumerate() {
        writeln!(csv, "{i},{a},{b}").expect("string write");
    }
    let name = |p: &Path| p.display().to_string();
    let width = name(ckpt_a).len().max(name(ckpt_b).len()).max(5);
    let mut table = format!("{:<width$}  rate of identity switching  switch events\n", "model");
    for (p, r) in [(ckpt_a, &report_a), (ckpt_b, &report_b)] {
        writeln!(table, "{:<width$}  {:<26}  {}", name(p), r.fraction(), r.switch_events()).expect("string write");
    }
    write(&dir.eval().join("identity.csv"), &csv)?;
    write(&dir.eval().join("identity.txt"), &table)?;
    print!("{table}");
    Ok(())
}

/// The `--image` file, or held-out scene `index` of the configured generator.
fn input_image(config: &TrainConfig, image: Option<PathBuf>, index: usize) -> Result<ImageTensor> {
    match image {
        Some(p) => Ok(ImageTensor::load_png(&p)?),
        None => {
            let items = config.data.generate_items(config.seed, HELD_OUT_SEED_OFFSET + index as u64, 1)?;
            Ok(items.into_iter().next().expect("one item").image)
        }
    }
}

pub fn traverse(
    common: &Common,
    ckpt: &Path,
    image: Option<PathBuf>,
    scene: usize,
    object: usize,
    dims: Vec<usize>,
    values: &[f64],
) -> Result<()> {
    let config = resolve(common, Some(&checkpoint_config(ckpt)?), Vec::new())?;
    let dir = run_dir(common, &config)?;
    let (_, nets) = load_networks(ckpt)?;
    let img = input_image(&config, image, scene)?;
    let dims = if dims.is_empty() { (0..nets.config.latent_dim()).collect() } else { dims };
    let t = latent_traversal_grid(&nets, &img, object, &dims, values)?;
    let path = dir.figures().join(format!("traversal_object{object}.png"));
    t.grid.save_png(&path)?;
    println!("{}", path.display());
    Ok(())
}

pub fn manipulate(
    common: &Common,
    ckpt: &Path,
    image: Option<PathBuf>,
    scene: usize,
    object: usize,
    delta: Vec<f64>,
    scale: f64,
) -> Result<()> {
    let config = resolve(common, Some(&checkpoint_config(ckpt)?), Vec::new())?;
    let dir = run_dir(common, &config)?;
    let (_, nets) = load_networks(ckpt)?;
    let img = input_image(&config, image, scene)?;
    let delta = if delta.is_empty() {
        random_delta(&nets, &mut ChaCha8Rng::seed_from_u64(config.seed))
    } else {
        delta
    };
    let delta: Vec<f64> = delta.iter().map(|d| d * scale).collect();
    let recon = nets.reconstruct(&img)?.fused_image()?;
    let edited = edit_scene(&nets, &img, object, &delta)?;
    let grid = tile_grid(&[vec![img, recon, edited]])?;
    let path = dir.figures().join(format!("manipulate_object{object}.png"));
    grid.save_png(&path)?;
    println!("{}", path.display());
    Ok(())
}
