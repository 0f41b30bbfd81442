//! `sclstm`: command-line front end for training, evaluating and inspecting
//! two-stream separable ConvLSTM violence detectors.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use sclstm_core::autodiff::{op_suite, GradcheckConfig};
use sclstm_core::efficiency::{count_flops, count_params};
use sclstm_core::io::{self, CLP1_VERSION, SCLW_VERSION};
use sclstm_core::model::gradcheck_model;
use sclstm_core::preproc::{background_suppress_of, frame_difference_of, prepare_streams, PrepMode};
use sclstm_core::train::{evaluate, fit, make_synth};
use sclstm_core::{build_model, Convention, Error, Fusion, Model, ModelConfig, Result, TrainConfig};

fn long_version() -> &'static str {
    // Leaked once per process; clap wants a 'static string.
    Box::leak(
        format!(
            "{}\nformats: SCLW v{SCLW_VERSION} (weights), CLP1 v{CLP1_VERSION} (clips), PPM/PNG frame directories",
            env!("CARGO_PKG_VERSION")
        )
        .into_boxed_str(),
    )
}

#[derive(Parser)]
#[command(name = "sclstm", version, long_version = long_version(), about)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Bsf,
    Diff,
}

#[derive(Clone, Copy, ValueEnum)]
enum ConventionArg {
    Mac1,
    Mac2,
}

#[derive(Subcommand)]
enum Cmd {
    /// Compare analytic and finite-difference gradients.
    Gradcheck {
        /// Also check the whole tiny two-stream network.
        #[arg(long)]
        full_model: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
    },
    /// Print parameter (and optionally FLOP) counts per layer.
    Params {
        /// JSON file or preset name (`sclstm presets` lists them).
        #[arg(long)]
        config: String,
        #[arg(long)]
        flops: bool,
        #[arg(long, value_enum, default_value = "mac2")]
        convention: ConventionArg,
    },
    /// List built-in model configurations, or print one as JSON.
    Presets { name: Option<String> },
    /// Write a synthetic motion dataset.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 16)]
        frames: usize,
        #[arg(long, default_value_t = 64)]
        size: usize,
    },
    /// Compute one stream's input from a clip and save it as CLP1.
    Preprocess {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum)]
        mode: Mode,
        /// Sample, resize and crop to this config's input geometry first.
        #[arg(long)]
        config: Option<String>,
    },
    /// Train a model and write its weights.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: String,
        #[arg(long)]
        epochs: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out_weights: PathBuf,
        /// Single-threaded kernels; bitwise reproducible weights.
        #[arg(long)]
        deterministic: bool,
        /// Optimizer, schedule and augmentation settings as JSON.
        #[arg(long)]
        train_config: Option<PathBuf>,
        /// Held-out dataset evaluated after every epoch.
        #[arg(long)]
        val: Option<PathBuf>,
    },
    /// Accuracy of saved weights on a dataset.
    Eval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        config: String,
    },
    /// Classify one clip (frame directory or CLP1 file).
    Predict {
        #[arg(long)]
        clip: PathBuf,
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        config: String,
    },
}

fn load_config(arg: &str) -> Result<ModelConfig> {
    let path = Path::new(arg);
    if !path.exists() {
        if let Some(cfg) = ModelConfig::preset(arg) {
            return Ok(cfg);
        }
    }
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    ModelConfig::from_json(&text)
}

fn load_model(config: &str, weights: &Path) -> Result<Model> {
    let mut model = build_model(load_config(config)?, 0)?;
    model.weights.import_from(&io::read_sclw(weights)?)?;
    Ok(model)
}

fn run(cmd: Cmd) -> Result<bool> {
    match cmd {
        Cmd::Gradcheck {
            full_model,
            seed,
            tolerance,
        } => {
            let gc = GradcheckConfig {
                seed,
                tolerance,
                ..Default::default()
            };
            let mut reports = op_suite(&gc)?;
            if full_model {
                for fusion in [Fusion::M, Fusion::C, Fusion::A] {
                    reports.push(gradcheck_model(ModelConfig::gradcheck(fusion), seed, &gc)?);
                }
            }
            let mut ok = true;
            for r in &reports {
                let skipped: usize = r.rows.iter().map(|x| x.skipped).sum();
                let coords: usize = r.rows.iter().map(|x| x.coords).sum();
                println!(
                    "{:<28} max_rel_err={:.3e} coords={coords} skipped={skipped} {}",
                    r.label,
                    r.max_rel_err(),
                    if r.pass() { "pass" } else { "FAIL" }
                );
                if !r.pass() {
                    print!("{r}");
                    ok = false;
                }
            }
            println!(
                "{} of {} checks passed at {tolerance:e}",
                reports.iter().filter(|r| r.pass()).count(),
                reports.len()
            );
            Ok(ok)
        }
        Cmd::Params {
            config,
            flops,
            convention,
        } => {
            let model = build_model(load_config(&config)?, 0)?;
            let report = if flops {
                let conv = match convention {
                    ConventionArg::Mac1 => Convention::Mac1,
                    ConventionArg::Mac2 => Convention::Mac2,
                };
                count_flops(&model, conv)?
            } else {
                count_params(&model)
            };
            if flops {
                println!("{report}");
            } else {
                let width = report.rows.iter().map(|r| r.name.len()).max().unwrap_or(5);
                for r in &report.rows {
                    println!("{:<width$} {:>10}", r.name, r.params);
                }
            }
            println!();
            for m in model.module_counts() {
                println!("module {:<16} {:>10}", m.module, m.params);
            }
            println!("total params {}", model.param_count());
            println!("trainable params {}", model.weights.trainable_params());
            Ok(true)
        }
        Cmd::Presets { name: None } => {
            for n in ModelConfig::PRESETS {
                println!("{n}");
            }
            Ok(true)
        }
        Cmd::Presets { name: Some(n) } => {
            let cfg = ModelConfig::preset(&n).ok_or_else(|| Error::InvalidArgument {
                op: "presets",
                msg: format!("unknown preset {n:?}"),
            })?;
            println!("{}", cfg.to_json());
            Ok(true)
        }
        Cmd::Synth {
            out,
            n,
            seed,
            frames,
            size,
        } => {
            let data = make_synth(n, seed, (frames, size, size))?;
            io::write_dataset(&out, &data)?;
            println!("wrote {n} clips to {}", out.display());
            Ok(true)
        }
        Cmd::Preprocess {
            input,
            out,
            mode,
            config,
        } => {
            let clip = io::load_clip(&input)?;
            let (bsf, fd) = match config {
                Some(c) => {
                    let s = prepare_streams(&clip, &load_config(&c)?.input, PrepMode::Eval)?;
                    (s.bsf, s.fd)
                }
                None => (
                    background_suppress_of(clip.frames()),
                    frame_difference_of(clip.frames()),
                ),
            };
            let t = match mode {
                Mode::Bsf => bsf,
                Mode::Diff => fd,
            };
            io::write_clp1(&out, &t)?;
            println!("wrote {:?} to {}", t.shape(), out.display());
            Ok(true)
        }
        Cmd::Train {
            data,
            config,
            epochs,
            seed,
            out_weights,
            deterministic,
            train_config,
            val,
        } => {
            sclstm_core::ops::set_deterministic(deterministic);
            let mut tc: TrainConfig = match train_config {
                Some(p) => {
                    let text = std::fs::read_to_string(&p).map_err(|e| Error::Io { path: p, source: e })?;
                    serde_json::from_str(&text)?
                }
                None => TrainConfig::default(),
            };
            tc.epochs = epochs;
            tc.seed = seed;
            let train = io::load_dataset(&data)?;
            let val = val.map(|v| io::load_dataset(&v)).transpose()?;
            let mut model = build_model(load_config(&config)?, seed)?;
            fit(&mut model, &train, val.as_ref(), &tc, |log| println!("{log}"))?;
            io::write_sclw(&out_weights, &model.weights)?;
            println!("train_acc_eval={:.4}", evaluate(&model, &train)?);
            println!("wrote {}", out_weights.display());
            Ok(true)
        }
        Cmd::Eval { data, weights, config } => {
            let model = load_model(&config, &weights)?;
            let data = io::load_dataset(&data)?;
            println!("clips={} accuracy={:.4}", data.len(), evaluate(&model, &data)?);
            Ok(true)
        }
        Cmd::Predict { clip, weights, config } => {
            let model = load_model(&config, &weights)?;
            let p = model.predict(&io::load_clip(&clip)?)?;
            println!("label={} p_violent={:.6}", p.label, p.p);
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.cmd) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error[{}]: {msg}", e.category());
            ExitCode::from(1)
        }
    }
}
