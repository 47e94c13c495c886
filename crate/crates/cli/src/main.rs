//! `scenecbir`: vocabulary building, encoding, annotation, indexing,
//! querying and benchmarking of scene image collections.

mod commands;
mod config;
mod representation;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::representation::Representation;

#[derive(Debug, Parser)]
#[command(
    name = "scenecbir",
    version,
    about = "Scene image retrieval with visual words and concept-occurrence vectors"
)]
struct Cli {
    #[command(flatten)]
    common: CommonArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// Dataset root: one sub-directory per category, or a manifest.tsv
    #[arg(long, global = true)]
    pub dataset: Option<PathBuf>,
    /// key = value configuration file; flags override its values
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (0 = one per core)
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Output directory for vocabularies, stores and reports
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum KindArg {
    Universal,
    Integrated,
    /// Upper and lower half integrated vocabularies
    Halves,
    All,
}

fn representation(s: &str) -> Result<Representation, String> {
    s.parse()
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Cluster descriptors into visual vocabularies
    BuildVocab {
        #[arg(long = "kind", value_enum, default_value = "all")]
        kinds: Vec<KindArg>,
        /// Words per clustering run (per category for integrated kinds)
        #[arg(long)]
        k: Option<usize>,
    },
    /// Encode every dataset image under one or more approaches
    Encode {
        #[arg(long = "approach", value_parser = representation)]
        approaches: Vec<Representation>,
    },
    /// Build concept-occurrence vectors from ground truth or trained annotators
    Annotate {
        /// Region representation used by the annotators
        #[arg(long)]
        approach: Option<String>,
        /// Build COVs directly from the annotation files
        #[arg(long)]
        use_ground_truth: bool,
        /// Directory searched for <image_id>.regions.txt (default: dataset root)
        #[arg(long)]
        annotations: Option<PathBuf>,
        /// Neighbours for the KNN annotator
        #[arg(long)]
        k: Option<usize>,
        /// knn or nearest-centroid
        #[arg(long)]
        annotator: Option<String>,
        #[arg(long)]
        folds: Option<usize>,
    },
    /// Validate feature stores as retrieval indexes
    Index {
        #[arg(long = "approach", value_parser = representation)]
        approaches: Vec<Representation>,
    },
    /// Rank the dataset against a query image
    Query {
        #[arg(long)]
        image: PathBuf,
        #[arg(long, value_parser = representation)]
        approach: Representation,
        #[arg(long)]
        top: Option<usize>,
    },
    /// Run the cross-validated benchmark and export the report
    Evaluate {
        #[arg(long = "approach", value_parser = representation)]
        approaches: Vec<Representation>,
        #[arg(long)]
        folds: Option<usize>,
    },
    /// Re-export recall-precision curves from a saved report
    ExportPr {
        /// report.json (default: <out>/report/report.json)
        #[arg(long)]
        report: Option<PathBuf>,
        /// Destination directory (default: <out>/report/pr)
        #[arg(long)]
        dest: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match commands::run(&cli.common, &cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
