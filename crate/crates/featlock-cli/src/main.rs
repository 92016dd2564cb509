//! `featlock` command-line driver.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use featlock::attacks::{self, AttackTarget, SweepSettings};
use featlock::config::ExperimentConfig;
use featlock::data::{read_image, resize_image, save_dataset, write_image};
use featlock::detector::{build_model, decode_and_nms, Checkpoint, Keying, NmsParams};
use featlock::evaluation::{evaluate_checkpoint, EvalReport, KeyMode};
use featlock::keyed_transforms::SecretKey;
use featlock::report::{write_file, BarChart};
use featlock::tensor::Tensor3;
use featlock::training::train;

const RUNS_ENV: &str = "FEATLOCK_RUNS_DIR";

#[derive(Parser)]
#[command(name = "featlock", version, about = "Key-based access control for object detectors")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Mode {
    Correct,
    Plain,
    Incorrect,
}

#[derive(Args)]
struct Common {
    /// Experiment config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output root; overrides FEATLOCK_RUNS_DIR and the config's output_dir.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Replaces every seed in the config.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Writes a fresh random key and prints its fingerprint.
    Keygen {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 16)]
        length: usize,
    },
    /// Writes a default experiment config.
    InitConfig {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "default")]
        name: String,
    },
    /// Writes the config's dataset to disk (PNG images, VOC annotations).
    GenData {
        #[command(flatten)]
        common: Common,
        /// Target directory.
        #[arg(long)]
        dir: PathBuf,
    },
    /// Trains the configured model; protected models need --key.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        key: Option<PathBuf>,
    },
    /// Evaluates a checkpoint on the config's test split.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_enum)]
        mode: Mode,
        #[arg(long)]
        key: Option<PathBuf>,
    },
    /// Correct, Plain and random-key attacks against a checkpoint.
    Attack {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// True key, used only for the Correct row.
        #[arg(long)]
        key: PathBuf,
        #[arg(long)]
        n_keys: Option<usize>,
    },
    /// Trains and attacks one model per site or per SHF block size.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        key: PathBuf,
        #[arg(long, value_delimiter = ',', conflicts_with = "shf_blocks", required_unless_present = "shf_blocks")]
        sites: Vec<usize>,
        #[arg(long, value_delimiter = ',')]
        shf_blocks: Vec<usize>,
        #[arg(long)]
        n_keys: Option<usize>,
    },
    /// Draws a checkpoint's detections onto an image.
    Render {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        image: PathBuf,
        #[arg(long, value_enum)]
        mode: Mode,
        #[arg(long)]
        key: Option<PathBuf>,
        /// Output PNG.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0.3)]
        score_thresh: f64,
    },
}

struct Run {
    cfg: ExperimentConfig,
    dir: PathBuf,
}

impl Run {
    fn open(common: &Common) -> Result<Self> {
        let mut cfg = ExperimentConfig::load(&common.config)
            .with_context(|| format!("loading config {}", common.config.display()))?;
        if let Some(seed) = common.seed {
            cfg.reseed(seed);
        }
        let root = match (&common.out, std::env::var_os(RUNS_ENV)) {
            (Some(out), _) => out.clone(),
            (None, Some(env)) => PathBuf::from(env),
            (None, None) => cfg.output_dir.clone(),
        };
        let dir = root.join(&cfg.name);
        Ok(Self { cfg, dir })
    }

    fn checkpoint_path(&self) -> PathBuf {
        self.dir.join("checkpoint.json")
    }

    fn reports(&self, file: &str) -> PathBuf {
        self.dir.join("reports").join(file)
    }
}

fn read_key(path: &Path) -> Result<SecretKey> {
    SecretKey::read_from(path).with_context(|| format!("reading key {}", path.display()))
}

/// Resolves the key mode, rejecting combinations that break protocol isolation.
fn key_mode(mode: Mode, key: Option<&Path>) -> Result<KeyMode> {
    Ok(match (mode, key) {
        (Mode::Plain, Some(_)) => bail!("usage: --mode plain takes no --key (plain queries never see a key)"),
        (Mode::Plain, None) => KeyMode::Plain,
        (Mode::Correct, Some(k)) => KeyMode::Correct(read_key(k)?),
        (Mode::Incorrect, Some(k)) => KeyMode::Incorrect(read_key(k)?),
        (_, None) => bail!("usage: --mode correct|incorrect requires --key"),
    })
}

fn mode_name(mode: Mode) -> &'static str {
    match mode {
        Mode::Correct => "correct",
        Mode::Plain => "plain",
        Mode::Incorrect => "incorrect",
    }
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::load(path).with_context(|| format!("loading checkpoint {}", path.display()))
}

fn cmd_keygen(out: &Path, length: usize) -> Result<()> {
    let key = SecretKey::random(&mut rand::rng(), length)?;
    key.write_to(out).with_context(|| format!("writing {}", out.display()))?;
    println!("fingerprint {}", key.fingerprint());
    Ok(())
}

fn cmd_train(common: &Common, key: Option<&Path>) -> Result<()> {
    let run = Run::open(common)?;
    let key = key.map(read_key).transpose()?;
    if run.cfg.is_protected() && key.is_none() {
        bail!("usage: the config protects the model; pass --key");
    }
    let data = run.cfg.load_data()?;
    let model = build_model(run.cfg.detector.clone(), run.cfg.seed)?;
    let out = train(model, &data.train, key.as_ref(), &run.cfg.train)?;
    write_file(run.dir.join("config.json"), &run.cfg.to_json()?)?;
    write_file(run.dir.join("logs").join("train.csv"), &out.log.to_csv())?;
    let path = run.checkpoint_path();
    out.checkpoint.save(&path)?;
    let last = out.log.rows.last().map_or(f64::NAN, |r| r.total);
    println!("checkpoint {}", path.display());
    println!("final_loss {last:.6}");
    Ok(())
}

fn cmd_eval(common: &Common, checkpoint: Option<&Path>, mode: Mode, key: Option<&Path>) -> Result<()> {
    let mode_key = key_mode(mode, key)?;
    let run = Run::open(common)?;
    let ckpt = load_checkpoint(&checkpoint.map_or_else(|| run.checkpoint_path(), Path::to_path_buf))?;
    let data = run.cfg.load_data()?;
    let report: EvalReport = evaluate_checkpoint(&ckpt, &data.test, &mode_key)?;
    let path = run.reports(&format!("eval_{}.csv", mode_name(mode)));
    write_file(&path, &report.to_csv())?;
    println!("report {}", path.display());
    println!("mAP {:.6}", report.map_value);
    Ok(())
}

fn cmd_attack(common: &Common, checkpoint: Option<&Path>, key: &Path, n_keys: Option<usize>) -> Result<()> {
    let run = Run::open(common)?;
    let ckpt = load_checkpoint(&checkpoint.map_or_else(|| run.checkpoint_path(), Path::to_path_buf))?;
    let key = read_key(key)?;
    if ckpt.key_fingerprint.as_deref() != Some(key.fingerprint().as_str()) {
        bail!("--key does not match the checkpoint's key fingerprint");
    }
    let data = run.cfg.load_data()?;
    let target = match (ckpt.config.input_block_size, ckpt.encrypted_sites.first()) {
        (Some(m), _) => AttackTarget::Block(m),
        (None, Some(&s)) => AttackTarget::Site(s),
        (None, None) => AttackTarget::Baseline,
    };
    let n = n_keys.unwrap_or(run.cfg.attack.n_wrong_keys);
    let result = attacks::attack_suite(&ckpt, &data.test, &key, target, n, run.cfg.attack.seed)?;
    let rows = [result];
    let csv = match target {
        AttackTarget::Block(_) => attacks::shf_table_csv(&rows),
        _ => attacks::site_table_csv(&rows),
    };
    let path = run.reports("attack.csv");
    write_file(&path, &csv)?;
    print!("{csv}");
    Ok(())
}

fn cmd_sweep(common: &Common, key: &Path, sites: &[usize], blocks: &[usize], n_keys: Option<usize>) -> Result<()> {
    let run = Run::open(common)?;
    let data = run.cfg.load_data()?;
    let settings = SweepSettings {
        detector: run.cfg.detector.clone(),
        train: run.cfg.train.clone(),
        model_seed: run.cfg.seed,
        key: read_key(key)?,
        n_wrong_keys: n_keys.unwrap_or(run.cfg.attack.n_wrong_keys),
        attack_seed: run.cfg.attack.seed,
    };
    let (name, mut rows) = if sites.is_empty() {
        ("shf", attacks::shf_sweep(&data.train, &data.test, blocks, &settings)?)
    } else {
        ("sites", attacks::site_sweep(&data.train, &data.test, sites, &settings)?)
    };
    rows.push(attacks::baseline_row(&data.train, &data.test, &settings)?);
    for row in &rows {
        let sub = match row.result.target {
            AttackTarget::Baseline => "baseline".to_string(),
            AttackTarget::Site(s) => format!("site-{s}"),
            AttackTarget::Block(m) => format!("shf-{m}"),
        };
        let dir = run.dir.join(sub);
        write_file(dir.join("logs").join("train.csv"), &row.outcome.log.to_csv())?;
        row.outcome.checkpoint.save(dir.join("checkpoint.json"))?;
    }
    let results: Vec<_> = rows.into_iter().map(|r| r.result).collect();
    let csv = if name == "shf" {
        attacks::shf_table_csv(&results)
    } else {
        attacks::site_table_csv(&results)
    };
    write_file(run.reports(&format!("sweep_{name}.csv")), &csv)?;
    let title = format!("{} sweep: mAP by protocol", run.cfg.name);
    write_file(
        run.dir.join("plots").join(format!("sweep_{name}.svg")),
        &BarChart::from_attacks(&title, &results).to_svg(),
    )?;
    print!("{csv}");
    Ok(())
}

fn draw_rect(data: &mut [f32], (h, w): (usize, usize), bbox: [f64; 4], color: [f32; 3]) {
    let px = |v: f64, n: usize| ((v * n as f64).round() as isize).clamp(0, n as isize - 1) as usize;
    let (x0, y0, x1, y1) = (px(bbox[0], w), px(bbox[1], h), px(bbox[2], w), px(bbox[3], h));
    let mut put = |x: usize, y: usize| {
        for (c, &v) in color.iter().enumerate() {
            data[(c * h + y) * w + x] = v;
        }
    };
    for x in x0..=x1 {
        put(x, y0);
        put(x, y1);
    }
    for y in y0..=y1 {
        put(x0, y);
        put(x1, y);
    }
}

fn cmd_render(checkpoint: &Path, image: &Path, mode: Mode, key: Option<&Path>, out: &Path, score_thresh: f64) -> Result<()> {
    let mode_key = key_mode(mode, key)?;
    let ckpt = load_checkpoint(checkpoint)?;
    let model = ckpt.to_model()?;
    let cfg = model.config().clone();
    let img = read_image(image).with_context(|| format!("reading {}", image.display()))?;
    if img.channels() != cfg.input_channels {
        bail!("image has {} channels, model expects {}", img.channels(), cfg.input_channels);
    }
    let input = resize_image(&img, cfg.input_size, cfg.input_size)?;
    let keying = match &mode_key {
        KeyMode::Correct(k) | KeyMode::Incorrect(k) => Some(Keying::derive(&cfg, k)?),
        KeyMode::Plain => None,
    };
    let raw = model.forward_keyed(&input, keying.as_ref())?;
    let nms = NmsParams {
        score_thresh,
        ..NmsParams::default()
    };
    let dets = decode_and_nms(&raw, model.priors(), &nms);
    const COLORS: [[f32; 3]; 4] = [[1.0, 0.1, 0.1], [0.1, 0.9, 0.1], [0.2, 0.3, 1.0], [1.0, 0.9, 0.0]];
    let (c, h, w) = img.shape();
    let mut data = img.into_vec();
    for d in &dets {
        let b = d.bbox;
        draw_rect(&mut data, (h, w), [b.xmin, b.ymin, b.xmax, b.ymax], COLORS[d.label % COLORS.len()]);
        println!("{} {:.4} {:.4} {:.4} {:.4} {:.4}", d.label, d.score, b.xmin, b.ymin, b.xmax, b.ymax);
    }
    let drawn = Tensor3::from_vec(c, h, w, data)?;
    write_image(&drawn, out).with_context(|| format!("writing {}", out.display()))?;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Keygen { out, length } => cmd_keygen(&out, length),
        Command::InitConfig { out, name } => {
            let cfg = ExperimentConfig {
                name,
                ..ExperimentConfig::default()
            };
            cfg.validate()?;
            cfg.save(&out)?;
            println!("config {}", out.display());
            Ok(())
        }
        Command::GenData { common, dir } => {
            let run = Run::open(&common)?;
            let data = run.cfg.load_data()?;
            save_dataset(&dir, &data.train.classes, &data.train.samples, &data.test.samples)?;
            println!("dataset {}", dir.display());
            Ok(())
        }
        Command::Train { common, key } => cmd_train(&common, key.as_deref()),
        Command::Eval {
            common,
            checkpoint,
            mode,
            key,
        } => cmd_eval(&common, checkpoint.as_deref(), mode, key.as_deref()),
        Command::Attack {
            common,
            checkpoint,
            key,
            n_keys,
        } => cmd_attack(&common, checkpoint.as_deref(), &key, n_keys),
        Command::Sweep {
            common,
            key,
            sites,
            shf_blocks,
            n_keys,
        } => cmd_sweep(&common, &key, &sites, &shf_blocks, n_keys),
        Command::Render {
            checkpoint,
            image,
            mode,
            key,
            out,
            score_thresh,
        } => cmd_render(&checkpoint, &image, mode, key.as_deref(), &out, score_thresh),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.to_string().starts_with("usage:") {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
