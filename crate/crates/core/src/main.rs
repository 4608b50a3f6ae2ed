use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::json;

use demo2prog::config::{Config, PriorKind};
use demo2prog::error::{Error, Result};
use demo2prog::grounding::{load_templates, save_templates};
use demo2prog::net::MicroNet;
use demo2prog::pipeline::{self, require};
use demo2prog::program::ProgramAst;
use demo2prog::symbolize::{library_from_csv, library_to_csv, symbolize, SymbolTrace};
use demo2prog::{induce, seed};

#[derive(Parser)]
#[command(name = "demo2prog", version, about = "Induce controller programs from a simulated demonstration")]
struct Cli {
    /// JSON configuration; defaults are used for missing sections.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured global seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Goal prior for inference.
    #[arg(long, global = true, value_parser = ["attribution", "baseline"])]
    prior: Option<String>,
    /// Output directory (DEMO2PROG_OUT takes precedence).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads; results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the demonstration.
    Demo,
    /// Train the visuomotor network on the demonstration.
    Train,
    /// Run the particle filter and symbolize the result.
    Infer,
    /// Compress the symbol trace into a program.
    Induce,
    /// Extract grounding templates for the inferred controllers.
    Ground,
    /// Reground and run the program in a rearranged scene.
    Synth,
    /// N_eff statistics of both priors over several seeds.
    #[command(name = "eval-table1")]
    EvalTable1 {
        /// Number of inference seeds (at least 2; defaults to eval.seeds)
        #[arg(long)]
        seeds: Option<usize>,
    },
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, contents)?;
    Ok(())
}

fn summary(out: &Path, stage: &str, value: serde_json::Value) -> Result<()> {
    let text = serde_json::to_string_pretty(&value).expect("json value");
    println!("{text}");
    write(&out.join(format!("{stage}_summary.json")), text + "\n")
}

fn load_net(out: &Path) -> Result<MicroNet> {
    MicroNet::load(&require(out.join(pipeline::WEIGHTS))?)
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(path) => Config::load(path)?,
        None => Config::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(p) = &cli.prior {
        cfg.prior.kind = p.parse()?;
    }
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("cannot size thread pool: {e}")))?;
    }
    let out = std::env::var_os("DEMO2PROG_OUT")
        .map(PathBuf::from)
        .or(cli.out)
        .unwrap_or_else(|| PathBuf::from("out"));
    std::fs::create_dir_all(&out)?;
    let demo_dir = out.join("demo");

    match cli.command {
        Command::Demo => {
            let (demo, library, program) = pipeline::generate(&cfg)?;
            pipeline::save_demo(&demo, &demo_dir)?;
            write(&out.join("library_true.csv"), library_to_csv(&library))?;
            write(&out.join("program_true.txt"), program.canonical().to_dsl())?;
            summary(
                &out,
                "demo",
                json!({
                    "frames": demo.len(),
                    "segments": demo.segments.len(),
                    "symbols": demo.symbol_trace(),
                }),
            )
        }
        Command::Train => {
            let demo = pipeline::load_demo(&demo_dir)?;
            let (net, curve) = pipeline::train_network(&cfg, &demo)?;
            net.save(&out.join(pipeline::WEIGHTS))?;
            write(&out.join(pipeline::LOSS_CSV), curve.to_csv())?;
            if let Some(f) = demo.frames.first() {
                net.input_gradient_saliency(&f.image, &f.theta)?
                    .to_image()
                    .save_ppm(&out.join("saliency.ppm"))?;
            }
            summary(
                &out,
                "train",
                json!({
                    "initial_loss": curve.0.first(),
                    "final_loss": curve.0.last(),
                    "epochs": curve.0.len() - 1,
                }),
            )
        }
        Command::Infer => {
            let demo = pipeline::load_demo(&demo_dir)?;
            let kind = cfg.prior.kind;
            let saliency = match kind {
                PriorKind::Attribution => Some(pipeline::network_saliency(&load_net(&out)?, &demo)?),
                PriorKind::Baseline => None,
            };
            let provider = saliency.as_ref().map(|s| s as &dyn demo2prog::saliency::SaliencyProvider);
            let trace = pipeline::infer(&cfg, &demo, provider, kind, pipeline::inference_seed(&cfg, 0))?;
            write(&out.join(format!("neff_{}.csv", kind.name())), trace.to_csv())?;
            let (library, symbols) = symbolize(&trace, cfg.smc.particles, &cfg.symbolizer)?;
            write(&out.join(pipeline::SYMBOLS_CSV), symbols.to_csv())?;
            write(&out.join(pipeline::LIBRARY_CSV), library_to_csv(&library))?;
            let stats = trace.stats()?;
            summary(
                &out,
                "infer",
                json!({
                    "prior": kind.name(),
                    "steps": trace.len(),
                    "n_eff": stats,
                    "controllers": library.len(),
                    "symbols": symbols.symbols.len(),
                }),
            )
        }
        Command::Induce => {
            let path = require(out.join(pipeline::SYMBOLS_CSV))?;
            let symbols = SymbolTrace::from_csv(&std::fs::read_to_string(&path)?, &path)?;
            let program = induce::induce_program(&symbols.symbols);
            write(&out.join(pipeline::PROGRAM_TXT), induce::pretty_print(&program))?;
            summary(
                &out,
                "induce",
                json!({
                    "trace_length": symbols.symbols.len(),
                    "nodes": program.node_count(),
                    "structured": program.contains_structure(),
                }),
            )
        }
        Command::Ground => {
            let demo = pipeline::load_demo(&demo_dir)?;
            let path = require(out.join(pipeline::LIBRARY_CSV))?;
            let library = library_from_csv(&std::fs::read_to_string(&path)?, &path)?;
            let templates = pipeline::templates_for(&cfg, &demo, &library)?;
            save_templates(&templates, &out.join(pipeline::TEMPLATES_DIR))?;
            summary(&out, "ground", json!({ "templates": templates.len() }))
        }
        Command::Synth => {
            let path = require(out.join(pipeline::PROGRAM_TXT))?;
            let program = ProgramAst::parse(&std::fs::read_to_string(&path)?)?;
            let path = require(out.join(pipeline::LIBRARY_CSV))?;
            let library = library_from_csv(&std::fs::read_to_string(&path)?, &path)?;
            let templates = load_templates(&out.join(pipeline::TEMPLATES_DIR))?;
            let scene = match &cfg.synth.scene {
                Some(s) => {
                    s.validate(&cfg.camera).map_err(|e| Error::Config(e.to_string()))?;
                    s.clone()
                }
                None => {
                    let mut rng = seed::rng(seed::stage_seed(cfg.seed, "synth"));
                    pipeline::random_scene(&cfg, &cfg.scene, &mut rng)?
                }
            };
            scene.render(&cfg.camera).save_ppm(&out.join("synth_scene.ppm"))?;
            let result = pipeline::synthesize(&cfg, &program, &library, &templates, &scene)?;
            write(&out.join(pipeline::VISITS_CSV), pipeline::visits_to_csv(&result.visits))?;
            write(&out.join("library_regrounded.csv"), library_to_csv(&result.library))?;
            let order: Vec<u32> = result.visits.iter().map(|v| v.object).collect();
            summary(&out, "synth", json!({ "visits": result.visits.len(), "objects": order }))
        }
        Command::EvalTable1 { seeds } => {
            let demo = pipeline::load_demo(&demo_dir)?;
            let saliency = pipeline::network_saliency(&load_net(&out)?, &demo)?;
            let table = pipeline::eval_table1(&cfg, &demo, &saliency, seeds.unwrap_or(cfg.eval.seeds))?;
            write(&out.join(pipeline::TABLE1_CSV), table.to_csv())?;
            write(&out.join("table1_seeds.csv"), table.per_seed_csv())?;
            summary(
                &out,
                "eval_table1",
                json!({
                    "attribution": table.attribution,
                    "baseline": table.baseline,
                    "directional_wins": table.directional_wins(),
                    "seeds": table.per_seed.len(),
                }),
            )
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
