use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use glyphmae::commands::{self, RagMode, StyleArg};
use glyphmae::config::RunConfig;
use glyphmae::engine::Engine;
use glyphmae::fontgen::{cjk_chars, write_font, StyleParams};

#[derive(Parser)]
#[command(name = "glyphmae", version, about = "Few-shot glyph generation with a pretrained ViT backbone")]
struct Cli {
    /// Run configuration (TOML).
    #[arg(short, long, global = true, default_value = "glyphmae.toml")]
    config: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum RagArg {
    Off,
    On,
    Both,
}

#[derive(Subcommand)]
enum Command {
    /// Write the default configuration to stdout.
    InitConfig,
    /// Generate synthetic TrueType fonts into the fonts directory.
    SynthFonts {
        #[arg(long, default_value_t = 4)]
        fonts: usize,
        #[arg(long, default_value_t = 200)]
        chars: usize,
    },
    /// Rasterize every font and write the split manifest.
    Render {
        #[arg(long)]
        force: bool,
    },
    /// Masked-autoencoder pretraining.
    Pretrain,
    /// Main-stage style training.
    Train,
    /// L1 refinement of the main checkpoint.
    Refine {
        /// Fraction of an epoch; overrides the config.
        #[arg(long)]
        fraction: Option<f64>,
    },
    /// Evaluate on the four test partitions.
    Eval {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = RagArg::Both)]
        rag: RagArg,
    },
    /// Build per-style retrieval indexes.
    Index {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Generate one glyph from a content PNG.
    Generate {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        content: PathBuf,
        /// Style reference PNG.
        #[arg(long, conflicts_with = "style_id", required_unless_present = "style_id")]
        style: Option<PathBuf>,
        #[arg(long)]
        style_id: Option<String>,
        #[arg(long)]
        rag: bool,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Nearest reference glyphs of a style for a content PNG.
    Retrieve {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        content: PathBuf,
        #[arg(long)]
        style_id: String,
        #[arg(short, default_value_t = 1)]
        k: usize,
    },
    /// Serve the HTTP API.
    Serve {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        port: Option<u16>,
    },
}

fn run(cli: Cli) -> Result<()> {
    if let Command::InitConfig = cli.command {
        print!("{}", RunConfig::default().to_toml()?);
        return Ok(());
    }
    let cfg = RunConfig::load(&cli.config)?;
    match cli.command {
        Command::InitConfig => unreachable!(),
        Command::SynthFonts { fonts, chars } => {
            let set = cjk_chars(chars);
            std::fs::create_dir_all(&cfg.data.fonts_dir)?;
            for i in 0..fonts {
                let path = cfg.data.fonts_dir.join(format!("synth{i:02}.ttf"));
                write_font(&path, &set, &StyleParams::from_seed(cfg.seed.wrapping_add(i as u64)))
                    .with_context(|| format!("writing {}", path.display()))?;
                println!("{}", path.display());
            }
        }
        Command::Render { force } => {
            let s = commands::cmd_render(&cfg, force)?;
            for (path, why) in &s.failures {
                eprintln!("skipped {}: {why}", path.display());
            }
            if s.skipped_existing {
                println!("manifest exists ({} entries); use --force to re-render", s.entries);
            } else {
                println!("rendered {} fonts, {} glyphs", s.fonts, s.entries);
            }
        }
        Command::Pretrain => {
            let (r, outcome) = commands::cmd_pretrain(&cfg)?;
            for (i, l) in outcome.epoch_losses.iter().enumerate() {
                println!("epoch {i}: {l:.6}");
            }
            println!("{} ({})", r.checkpoint.display(), r.checkpoint_id);
        }
        Command::Train => {
            let r = commands::cmd_train(&cfg)?;
            println!("{} steps -> {} ({})", r.steps, r.checkpoint.display(), r.checkpoint_id);
        }
        Command::Refine { fraction } => {
            let r = commands::cmd_refine(&cfg, fraction)?;
            println!("{} steps -> {} ({})", r.steps, r.checkpoint.display(), r.checkpoint_id);
        }
        Command::Eval { checkpoint, rag } => {
            let mode = match rag {
                RagArg::Off => RagMode::Off,
                RagArg::On => RagMode::On,
                RagArg::Both => RagMode::Both,
            };
            for run in commands::cmd_eval(&cfg, checkpoint.as_deref(), mode)? {
                println!("{}", if run.rag { "with retrieval" } else { "fixed reference" });
                println!("{}", run.table);
            }
        }
        Command::Index { checkpoint } => {
            for p in commands::cmd_index(&cfg, checkpoint.as_deref())? {
                println!("{}", p.display());
            }
        }
        Command::Generate {
            checkpoint,
            content,
            style,
            style_id,
            rag,
            out,
        } => {
            let style = match (style, style_id) {
                (Some(p), _) => StyleArg::Image(p),
                (None, Some(id)) => StyleArg::Id(id),
                (None, None) => anyhow::bail!("give --style or --style-id"),
            };
            let prov = commands::cmd_generate(&cfg, checkpoint.as_deref(), &content, &style, rag, &out)?;
            println!("{}", serde_json::to_string_pretty(&prov)?);
        }
        Command::Retrieve {
            checkpoint,
            content,
            style_id,
            k,
        } => {
            let refs = commands::cmd_retrieve(&cfg, checkpoint.as_deref(), &content, &style_id, k)?;
            println!("{}", serde_json::to_string_pretty(&refs)?);
        }
        Command::Serve { checkpoint, port } => {
            let addr: SocketAddr = format!("{}:{}", cfg.serve.host, port.unwrap_or(cfg.serve.port))
                .parse()
                .context("serve address")?;
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(glyphmae::serve::serve(addr, move || Engine::load(&cfg, checkpoint.as_deref())))?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
