use std::error::Error;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;

use melodyevo::abc;
use melodyevo::pipeline::{
    self, bench_timing, write_timing_csv, BenchConfig, CorpusContext, FitnessMode, PipelineConfig, ScorerMode,
};
use melodyevo::score_store::ScoreStore;
use melodyevo::surrogate::SurrogateModel;

/// Evolve melodies toward a tune corpus, learn from listener scores, and
/// evolve again against the learned model.
#[derive(Debug, Parser)]
#[command(name = "melodyevo", version)]
struct Cli {
    /// TOML file with pipeline settings; missing keys take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for every random stage.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Where training scores come from.
    #[arg(long, global = true, value_parser = parse_scorer)]
    scorer: Option<ScorerMode>,
    /// How the corpus-similarity fitness is computed.
    #[arg(long, global = true, value_parser = parse_fitness)]
    fitness: Option<FitnessMode>,
    /// Output directory; the store and model files move into it as well.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// ABC file or directory of ABC files.
    #[arg(long, global = true)]
    corpus: Option<PathBuf>,
    /// Log progress to stderr (repeat for more detail).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Inspect the corpus.
    #[command(subcommand)]
    Corpus(CorpusCommand),
    /// Evolve melodies toward the corpus and store the whole archive for scoring.
    Phase1,
    /// Train the score model on the stored scores.
    Phase2,
    /// Evolve melodies against the score model and write the best as ABC files.
    Phase3,
    /// Time the fitness functions against corpus size and melody length.
    Bench(BenchArgs),
    /// Manage collected scores.
    #[command(subcommand)]
    Score(ScoreCommand),
    /// Print the effective configuration as TOML.
    Config,
}

#[derive(Debug, Subcommand)]
enum CorpusCommand {
    /// Token counts and probabilities, one token per line.
    Stats,
}

#[derive(Debug, Args)]
struct BenchArgs {
    /// Corpus size multiples to time.
    #[arg(long, value_delimiter = ',', default_values_t = [1, 2, 4])]
    replications: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_values_t = [15, 30, 60])]
    lengths: Vec<usize>,
    /// Melodies per timed batch.
    #[arg(long, default_value_t = 20)]
    evaluations: usize,
    /// Timed rounds; every cell is timed once per round.
    #[arg(long, default_value_t = 51)]
    batches: usize,
    /// Time this saved model instead of a freshly initialized one.
    #[arg(long)]
    model: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum ScoreCommand {
    /// Merge scores from a store file into the configured store.
    Import { file: PathBuf },
    /// Write a compacted copy of the configured store.
    Export { file: PathBuf },
    /// List melodies that most need scores.
    Pending {
        #[arg(long, default_value_t = 10)]
        limit: usize,
    },
    /// Record one score (0 to 100) for a melody.
    Add { melody_id: String, score: f64 },
}

fn parse_scorer(s: &str) -> Result<ScorerMode, String> {
    match s {
        "store" => Ok(ScorerMode::Store),
        "synthetic" => Ok(ScorerMode::Synthetic),
        _ => Err(format!("expected `store` or `synthetic`, got `{s}`")),
    }
}

fn parse_fitness(s: &str) -> Result<FitnessMode, String> {
    match s {
        "naive" => Ok(FitnessMode::Naive),
        "indexed" => Ok(FitnessMode::Indexed),
        _ => Err(format!("expected `naive` or `indexed`, got `{s}`")),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new()
        .filter_level(level)
        .format_timestamp(None)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = e.source();
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            ExitCode::FAILURE
        }
    }
}

fn load_config(cli: &Cli) -> Result<PipelineConfig, Box<dyn Error>> {
    let mut config = match &cli.config {
        Some(path) => PipelineConfig::from_toml_file(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.set_seed(seed);
    }
    if let Some(scorer) = cli.scorer {
        config.scorer = scorer;
    }
    if let Some(fitness) = cli.fitness {
        config.fitness = fitness;
    }
    if let Some(out) = &cli.out {
        config.store_path = out.join("store.jsonl");
        config.model_path = out.join("model.json");
        config.out_dir = out.clone();
    }
    if let Some(corpus) = &cli.corpus {
        config.corpus_path = corpus.clone();
    }
    config.validate()?;
    Ok(config)
}

fn run(cli: Cli) -> Result<(), Box<dyn Error>> {
    let config = load_config(&cli)?;
    match cli.command {
        Command::Corpus(CorpusCommand::Stats) => corpus_stats(&config),
        Command::Phase1 => run_phase1(&config),
        Command::Phase2 => run_phase2(&config),
        Command::Phase3 => run_phase3(&config),
        Command::Bench(args) => run_bench(&config, &args),
        Command::Score(cmd) => run_score(&config, cmd),
        Command::Config => {
            print!("{}", config.to_toml());
            Ok(())
        }
    }
}

fn corpus_stats(config: &PipelineConfig) -> Result<(), Box<dyn Error>> {
    let corpus = abc::load_corpus(&config.corpus_path)?;
    for skip in &corpus.skipped {
        eprintln!("skipped {skip}");
    }
    let ctx = CorpusContext::from_corpus(corpus)?;
    println!("tunes\t{}", ctx.corpus.tunes.len());
    println!("skipped\t{}", ctx.corpus.skipped.len());
    println!("tokens\t{}", ctx.index.total_tokens());
    println!("token\tcount\tprobability");
    for (token, p) in ctx.index.prob_table() {
        println!("{token}\t{}\t{p}", ctx.index.counts()[&token]);
    }
    Ok(())
}

fn create_dir(dir: &Path) -> Result<(), Box<dyn Error>> {
    fs::create_dir_all(dir).map_err(|e| format!("cannot create {}: {e}", dir.display()).into())
}

fn run_phase1(config: &PipelineConfig) -> Result<(), Box<dyn Error>> {
    let ctx = CorpusContext::load(&config.corpus_path)?;
    create_dir(&config.out_dir)?;
    let mut store = ScoreStore::open(&config.store_path)?;
    let report = pipeline::phase1(config, &ctx, &mut store)?;
    let archive = config.out_dir.join("phase1_archive.tsv");
    pipeline::write_archive_file(&archive, &report.run)?;
    println!("best fitness\t{}", report.run.best_fitness);
    println!("best melody\t{}", report.run.best.to_abc_body());
    println!("archived\t{}", report.run.archive.len());
    println!("newly stored\t{}", report.stored);
    println!("archive file\t{}", archive.display());
    println!("store\t{}", config.store_path.display());
    Ok(())
}

fn run_phase2(config: &PipelineConfig) -> Result<(), Box<dyn Error>> {
    let ctx = CorpusContext::load(&config.corpus_path)?;
    let mut store = ScoreStore::open(&config.store_path)?;
    let scored = pipeline::apply_scorer(config, &ctx, &mut store)?;
    if scored > 0 {
        info!("scored {scored} melodies");
    }
    let result = pipeline::phase2(config, &ctx.index.token_alphabet(), &store)?;
    let trace = pipeline::save_phase2(config, &result)?;
    println!("training melodies\t{}", result.training_examples);
    println!(
        "initial mse\t{}",
        result.report.loss_trace.first().copied().unwrap_or(f64::NAN)
    );
    println!("final mse\t{}", result.report.final_mse());
    println!("model\t{}", config.model_path.display());
    println!("loss trace\t{}", trace.display());
    Ok(())
}

fn run_phase3(config: &PipelineConfig) -> Result<(), Box<dyn Error>> {
    let ctx = CorpusContext::load(&config.corpus_path)?;
    let model = SurrogateModel::load(&config.model_path)?;
    let report = pipeline::phase3(config, &ctx, &model)?;
    let archive = config.out_dir.join("phase3_archive.tsv");
    pipeline::write_archive_file(&archive, &report.run)?;
    let paths = pipeline::write_melodies(&config.out_dir.join("melodies"), &report.selected)?;
    for (path, (melody, score)) in paths.iter().zip(&report.selected) {
        println!("{score:.3}\t{}\t{}", path.display(), melody.to_abc_body());
    }
    println!("archive file\t{}", archive.display());
    Ok(())
}

fn run_bench(config: &PipelineConfig, args: &BenchArgs) -> Result<(), Box<dyn Error>> {
    let ctx = CorpusContext::load(&config.corpus_path)?;
    let model = match &args.model {
        Some(path) => SurrogateModel::load(path)?,
        None => SurrogateModel::init(ctx.index.token_alphabet(), &config.train),
    };
    let bench = BenchConfig {
        replications: args.replications.clone(),
        melody_lengths: args.lengths.clone(),
        evaluations: args.evaluations,
        batches: args.batches,
        seed: config.phase1.rng_seed,
    };
    let rows = bench_timing(&ctx.corpus.tunes, &ctx.distribution, &model, &bench)?;
    create_dir(&config.out_dir)?;
    let path = config.out_dir.join("timing.csv");
    write_timing_csv(&path, &rows)?;
    println!(
        "{:<10} {:>8} {:>8} {:>7} {:>14}",
        "evaluator", "tunes", "tokens", "length", "ns/eval"
    );
    for r in &rows {
        let name = format!("{:?}", r.evaluator).to_lowercase();
        println!(
            "{name:<10} {:>8} {:>8} {:>7} {:>14.0}",
            r.corpus_tunes, r.corpus_tokens, r.melody_length, r.mean_ns
        );
    }
    println!("timing file\t{}", path.display());
    Ok(())
}

fn run_score(config: &PipelineConfig, cmd: ScoreCommand) -> Result<(), Box<dyn Error>> {
    let mut store = ScoreStore::open(&config.store_path)?;
    match cmd {
        ScoreCommand::Import { file } => {
            let n = store.import(&file)?;
            println!("imported\t{n}");
        }
        ScoreCommand::Export { file } => {
            store.export(&file)?;
            println!("exported\t{}", store.len());
        }
        ScoreCommand::Pending { limit } => {
            for item in store.pending(limit) {
                println!(
                    "{}\t{}\t{}",
                    item.melody_id,
                    item.scores.len(),
                    item.melody.to_abc_body()
                );
            }
        }
        ScoreCommand::Add { melody_id, score } => {
            let item = store.add_score(&melody_id, score)?;
            println!("{}\t{}\t{}", item.melody_id, item.scores.len(), item.mean_score);
        }
    }
    Ok(())
}
