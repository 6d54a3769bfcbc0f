//! Command-line entry point: train, evaluate, transform, compare and
//! synthesize commands over the domain-transfer library.

use std::path::PathBuf;

use anyhow::{bail, Context};
use candle_core::Device;
use clap::{Parser, Subcommand};

use domain_transfer::config::{builtin_config, load_experiment_config, ExperimentConfig};
use domain_transfer::data::{
    self, load_paired_testset, load_unpaired_dataset, CorruptionKind, CorruptionSpec, Domain,
    Split,
};
use domain_transfer::engine::{self, TrainOptions, TrainState};
use domain_transfer::eval;
use domain_transfer::extractors::EdgeDetector;

#[derive(Parser)]
#[command(name = "dtx", about = "Unpaired domain transfer: training, evaluation and reporting")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a pair of transformers on two unpaired image folders.
    Train {
        /// Config file (`key = value` lines, `#` comments).
        #[arg(long, conflicts_with = "preset")]
        config: Option<PathBuf>,
        /// Built-in preset name: cycle, cycle+pdist or cycle+edge.
        #[arg(long)]
        preset: Option<String>,
        /// Folder with degraded-domain training images.
        #[arg(long)]
        data_a: PathBuf,
        /// Folder with clean-domain training images.
        #[arg(long)]
        data_b: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Edge detector backbone for edge losses.
        #[arg(long, value_parser = ["sobel", "hed"], default_value = "sobel")]
        edge_detector: String,
        /// Pretrained weights for `--edge-detector hed`; random frozen
        /// weights are used when omitted.
        #[arg(long)]
        hed_weights: Option<PathBuf>,
        /// Stop after this many optimizer steps.
        #[arg(long)]
        max_steps: Option<usize>,
        /// Resume from an existing checkpoint directory.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Compute per-pair perceptual distances for a checkpoint.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Dataset root containing testA/, testB/ and pairs.csv.
        #[arg(long)]
        testset: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Enhance a folder of images, preserving filenames.
    Transform {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long = "in", value_name = "IN")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Merge several `distances.csv` files into a comparison report.
    Compare {
        /// Repeated NAME=DISTANCES_CSV entries.
        #[arg(long = "run", required = true)]
        runs: Vec<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a synthetic paired corruption dataset.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        kind: String,
        #[arg(long)]
        severity: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Total base images; one quarter (at least 1) is held out as the
        /// paired test split.
        #[arg(long, default_value_t = 80)]
        count: usize,
        /// Square image side in pixels.
        #[arg(long, default_value_t = 64)]
        size: u32,
    },
}

fn resolve_config(
    config: &Option<PathBuf>,
    preset: &Option<String>,
) -> anyhow::Result<ExperimentConfig> {
    match (config, preset) {
        (Some(path), _) => Ok(load_experiment_config(path)?),
        (None, Some(name)) => Ok(builtin_config(name)?),
        (None, None) => bail!("one of --config or --preset is required"),
    }
}

fn main() -> anyhow::Result<()> {
    let cli = Cli::parse();
    let device = Device::Cpu;
    match cli.command {
        Command::Train {
            config,
            preset,
            data_a,
            data_b,
            out,
            seed,
            edge_detector,
            hed_weights,
            max_steps,
            resume,
        } => {
            let detector = match (edge_detector.as_str(), &hed_weights) {
                ("sobel", None) => EdgeDetector::sobel(),
                ("sobel", Some(_)) => bail!("--hed-weights only applies to --edge-detector hed"),
                ("hed", Some(path)) => EdgeDetector::hed_from_file(path, &device)?,
                ("hed", None) => EdgeDetector::hed_with_random_weights(seed, &device)?,
                _ => unreachable!("clap validates the backbone"),
            };
            let mut state = match resume {
                Some(dir) => engine::load_checkpoint(&dir, &device)
                    .with_context(|| format!("resuming from {}", dir.display()))?,
                None => TrainState::new(resolve_config(&config, &preset)?, seed, detector, &device)?,
            };
            let train_a = load_unpaired_dataset(&data_a, Domain::A, Split::Train)
                .or_else(|_| load_flat(&data_a, Domain::A))?;
            let train_b = load_unpaired_dataset(&data_b, Domain::B, Split::Train)
                .or_else(|_| load_flat(&data_b, Domain::B))?;
            let mut opts = TrainOptions::new(&out);
            opts.max_steps = max_steps;
            engine::train(&mut state, &train_a, &train_b, &opts)?;
            println!(
                "trained {} epochs / {} steps; checkpoints in {}",
                state.epoch,
                state.step,
                out.display()
            );
        }
        Command::Evaluate { checkpoint, testset, out } => {
            let (transformer, _config) = engine::load_transformer(&checkpoint, &device)?;
            let pairs = load_paired_testset(&testset)?;
            let extractor = eval::eval_extractor(&device)?;
            let distances = eval::evaluate_transformer(&transformer, &pairs, &extractor, &device)?;
            std::fs::create_dir_all(&out)?;
            eval::write_distances_csv(&distances, out.join("distances.csv"))?;
            let values: Vec<f64> = distances.iter().map(|(_, d)| *d).collect();
            let stats = eval::summarize_boxplot(&values)?;
            std::fs::write(
                out.join("boxstats.json"),
                serde_json::to_string_pretty(&stats).unwrap(),
            )?;
            println!(
                "evaluated {} pairs: mean {:.6}, median {:.6}",
                stats.n, stats.mean, stats.median
            );
        }
        Command::Transform { checkpoint, input, out } => {
            let (transformer, _config) = engine::load_transformer(&checkpoint, &device)?;
            std::fs::create_dir_all(&out)?;
            let mut names: Vec<_> = std::fs::read_dir(&input)?
                .collect::<std::io::Result<Vec<_>>>()?
                .into_iter()
                .map(|e| e.path())
                .filter(|p| p.is_file())
                .collect();
            names.sort();
            if names.is_empty() {
                bail!("{} contains no files", input.display());
            }
            for path in names {
                let img = data::load_image(&path)?;
                let tensor = data::image_to_tensor(&img, &device)?;
                let enhanced = transformer.transform(&tensor)?;
                let name = path.file_name().expect("listing returned a file");
                data::tensor_to_image(&enhanced)?
                    .save(out.join(name))
                    .with_context(|| format!("writing {}", out.join(name).display()))?;
            }
            println!("wrote enhanced images to {}", out.display());
        }
        Command::Compare { runs, out } => {
            let mut results = Vec::new();
            for entry in &runs {
                let (name, path) = entry
                    .split_once('=')
                    .with_context(|| format!("--run `{entry}`: expected NAME=PATH"))?;
                results.push((name.to_string(), read_distances_csv(path.as_ref())?));
            }
            let stats = eval::compare_report(&results, &out)?;
            for (name, s) in &stats {
                println!("{name}: n {} mean {:.6} median {:.6}", s.n, s.mean, s.median);
            }
            println!("report written to {}", out.display());
        }
        Command::Synth { out, kind, severity, seed, count, size } => {
            let kind: CorruptionKind = kind.parse()?;
            let spec = CorruptionSpec { kind, severity, seed };
            let base = data::procedural_base_images(seed, count, size);
            let n_test = (count / 4).max(1);
            let meta = data::synthesize_desk_dataset(&out, &base, &spec, n_test)?;
            println!(
                "synthesized {} train pairs and {} test pairs in {}",
                meta.n_train,
                meta.n_test,
                out.display()
            );
        }
    }
    Ok(())
}

/// `--data-a`/`--data-b` also accept a bare folder of images (no
/// trainA/trainB layout); useful for ad-hoc corpora.
fn load_flat(dir: &std::path::Path, domain: Domain) -> domain_transfer::Result<data::UnpairedDataset> {
    data::load_unpaired_flat(dir, domain)
}

fn read_distances_csv(path: &std::path::Path) -> anyhow::Result<Vec<(String, f64)>> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))?;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if i == 0 || line.trim().is_empty() {
            continue;
        }
        let (id, d) = line
            .split_once(',')
            .with_context(|| format!("{}:{}: expected pair_id,distance", path.display(), i + 1))?;
        rows.push((id.trim().to_string(), d.trim().parse::<f64>()?));
    }
    Ok(rows)
}
