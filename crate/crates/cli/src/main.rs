//! `dxtrust`: diagnose dialogues, score the reasoning, evaluate and report.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "dxtrust", version, about = "Grounded diagnostic reasoning and confidence scoring")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Knowledge-graph utilities.
    Kg {
        #[command(subcommand)]
        action: KgAction,
    },
    /// Produce one diagnostic hypothesis per dialogue.
    Diagnose(DiagnoseArgs),
    /// Score hypotheses with KAS, LCS and DCS.
    Score(ScoreArgs),
    /// Attach silver labels to a corpus.
    Label(LabelArgs),
    /// Classification metrics, subgroup accuracy and DCS by correctness.
    Eval(EvalArgs),
    /// Sweep alpha and lambda over stored scores.
    Ablate(AblateArgs),
    /// Write report files from eval and ablation results.
    Report(ReportArgs),
}

#[derive(Subcommand, Debug)]
pub enum KgAction {
    /// Load the graph (and optionally criteria) and print summary counts.
    Validate {
        #[arg(long)]
        kg: PathBuf,
        #[arg(long)]
        criteria: Option<PathBuf>,
        /// Also write the summary as JSON here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args, Debug, Clone)]
pub struct Inputs {
    #[arg(long)]
    pub kg: PathBuf,
    #[arg(long)]
    pub criteria: PathBuf,
}

#[derive(Args, Debug, Clone)]
pub struct Runtime {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = dxtrust::egdr::DEFAULT_TEMPLATE_VERSION)]
    pub template_version: String,
    /// Worker threads; 1 runs sequentially.
    #[arg(long, default_value_t = 4)]
    pub max_concurrency: usize,
    /// Model name for the remote provider.
    #[arg(long, default_value = "gpt-4o-mini")]
    pub model: String,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Egdr,
    Direct,
    Cot,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChatBackend {
    Stub,
    Remote,
    /// Deterministic in-process responder that answers from the graph.
    Oracle,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum Policy {
    Faithful,
    Overconfident,
}

#[derive(Args, Debug)]
pub struct DiagnoseArgs {
    #[command(flatten)]
    pub inputs: Inputs,
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = Mode::Egdr)]
    pub mode: Mode,
    #[arg(long, value_enum, default_value_t = ChatBackend::Stub)]
    pub provider: ChatBackend,
    /// Response script for the stub provider.
    #[arg(long)]
    pub script: Option<PathBuf>,
    /// Record every exchange to this file as a replayable script.
    #[arg(long)]
    pub record_script: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Policy::Faithful)]
    pub oracle_policy: Policy,
    #[command(flatten)]
    pub runtime: Runtime,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScoreBackend {
    /// No chat provider: rule-based decomposition and attribution.
    Symbolic,
    Stub,
    Remote,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum LcsArg {
    Rules,
    Provider,
}

#[derive(Args, Debug)]
pub struct ScoreArgs {
    #[command(flatten)]
    pub inputs: Inputs,
    /// Hypotheses written by `diagnose`.
    #[arg(long)]
    pub hypotheses: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = ScoreBackend::Symbolic)]
    pub provider: ScoreBackend,
    #[arg(long)]
    pub script: Option<PathBuf>,
    #[arg(long, default_value_t = 0.5, allow_negative_numbers = true)]
    pub alpha: f64,
    #[arg(long, default_value_t = 0.75, allow_negative_numbers = true)]
    pub lambda: f64,
    /// Retrieval budget in triplets.
    #[arg(long, default_value_t = 32)]
    pub budget: usize,
    #[arg(long, value_enum, default_value_t = LcsArg::Rules)]
    pub lcs_mode: LcsArg,
    /// Average claim weights instead of summing them before the sigmoid.
    #[arg(long)]
    pub kas_mean: bool,
    #[command(flatten)]
    pub runtime: Runtime,
}

#[derive(Args, Debug)]
pub struct LabelArgs {
    #[command(flatten)]
    pub inputs: Inputs,
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Pseudo-label with a chat provider instead of the rule engine.
    #[arg(long, value_enum)]
    pub provider: Option<ChatBackend>,
    #[arg(long)]
    pub script: Option<PathBuf>,
    #[command(flatten)]
    pub runtime: Runtime,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[command(flatten)]
    pub inputs: Inputs,
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub hypotheses: PathBuf,
    /// Score records; enables DCS by correctness.
    #[arg(long)]
    pub scores: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct AblateArgs {
    #[arg(long)]
    pub scores: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "0,0.25,0.5,0.75,1")]
    pub alpha_grid: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "0,0.25,0.5,0.75,1")]
    pub lambda_grid: Vec<f64>,
    /// Alpha used by the lambda rows.
    #[arg(long, default_value_t = 0.5, allow_negative_numbers = true)]
    pub alpha: f64,
    /// Lambda used by the alpha rows.
    #[arg(long, default_value_t = 0.75, allow_negative_numbers = true)]
    pub lambda: f64,
    #[arg(long)]
    pub kas_mean: bool,
    #[arg(long, default_value_t = 4)]
    pub max_concurrency: usize,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum FormatArg {
    Json,
    Csv,
    Svg,
}

#[derive(Args, Debug)]
pub struct ReportArgs {
    /// Output of `eval`.
    #[arg(long)]
    pub eval: Option<PathBuf>,
    /// Output of `ablate`.
    #[arg(long)]
    pub ablation: Option<PathBuf>,
    #[arg(long, value_enum, value_delimiter = ',', default_value = "json,csv,svg")]
    pub formats: Vec<FormatArg>,
    /// Directory for report files.
    #[arg(long)]
    pub out: PathBuf,
}

pub const EXIT_VALIDATION: u8 = 1;
pub const EXIT_RUNTIME: u8 = 2;
pub const EXIT_USAGE: u8 = 64;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match commands::dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
