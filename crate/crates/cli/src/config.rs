//! Command-line flags, the config file, and how the two combine.
//!
//! Precedence is flag, then file, then built-in default.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;
use sqlfix_core::PipelineConfig;

use crate::Failure;

#[derive(Debug, Parser)]
#[command(name = "sqlfix", version, about = "Detect and repair faulty Text-to-SQL output")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build the repair-example store from a training corpus.
    BuildErrorRecord(CommonArgs),
    /// Run the review/repair pipeline over a corpus.
    Run(CommonArgs),
    /// Score a run file against gold SQL.
    Evaluate(CommonArgs),
    /// Print the text table for an existing report JSON.
    Report(CommonArgs),
    /// End-to-end health check against live endpoints.
    Smoke(CommonArgs),
}

impl Command {
    pub fn args(&self) -> &CommonArgs {
        match self {
            Command::BuildErrorRecord(a)
            | Command::Run(a)
            | Command::Evaluate(a)
            | Command::Report(a)
            | Command::Smoke(a) => a,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TimerKind {
    Wall,
    Fixed,
}

#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// TOML (or .json) config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub questions: Option<PathBuf>,
    #[arg(long)]
    pub tables: Option<PathBuf>,
    #[arg(long)]
    pub db_root: Option<PathBuf>,
    #[arg(long)]
    pub train_questions: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Repair-example store; defaults to `<out>/error_record.jsonl`.
    #[arg(long)]
    pub store: Option<PathBuf>,
    /// Run file to score; defaults to `<out>/run.jsonl`.
    #[arg(long)]
    pub run: Option<PathBuf>,
    /// Report to print; defaults to `<out>/report.json`.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Directory of prompt template overrides.
    #[arg(long)]
    pub prompts: Option<PathBuf>,
    #[arg(long)]
    pub max_try_times: Option<usize>,
    #[arg(long)]
    pub beam_size: Option<usize>,
    #[arg(long)]
    pub n_variants: Option<usize>,
    #[arg(long)]
    pub parallelism: Option<usize>,
    #[arg(long)]
    pub no_cot: bool,
    #[arg(long)]
    pub no_reflexion: bool,
    #[arg(long)]
    pub no_mcs: bool,
    #[arg(long, overrides_with = "no_require_nonempty")]
    pub require_nonempty: bool,
    #[arg(long, overrides_with = "require_nonempty")]
    pub no_require_nonempty: bool,
    #[arg(long)]
    pub limit: Option<usize>,
    /// Rules file for the offline chat backend.
    #[arg(long)]
    pub scripted_llm: Option<PathBuf>,
    /// Rules file for the offline SQL generator.
    #[arg(long)]
    pub scripted_sqltool: Option<PathBuf>,
    /// Write every chat request to `<out>/prompts.jsonl`.
    #[arg(long)]
    pub capture_prompts: bool,
    /// Execution timer used for VES.
    #[arg(long, value_enum)]
    pub timer: Option<TimerKind>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Endpoint {
    /// OpenAI-compatible base URL, e.g. `http://localhost:8000/v1`.
    pub base_url: Option<String>,
    pub model: String,
    /// Environment variable holding the API key.
    pub api_key_env: String,
    pub timeout_s: f64,
    pub max_attempts: u32,
    pub scripted: Option<PathBuf>,
}

impl Default for Endpoint {
    fn default() -> Self {
        Self {
            base_url: None,
            model: "gpt-3.5-turbo".into(),
            api_key_env: "OPENAI_API_KEY".into(),
            timeout_s: 60.0,
            max_attempts: 3,
            scripted: None,
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataPaths {
    pub questions: Option<PathBuf>,
    pub tables: Option<PathBuf>,
    pub db_root: Option<PathBuf>,
    pub train_questions: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub store: Option<PathBuf>,
    pub prompts: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub pipeline: PipelineConfig,
    pub data: DataPaths,
    pub llm: Endpoint,
    pub sqltool: Endpoint,
    pub limit: Option<usize>,
    pub timer: Option<TimerKind>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self, Failure> {
        let text = std::fs::read_to_string(path).map_err(|e| Failure::Io(format!("{}: {e}", path.display())))?;
        let parsed = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).map_err(|e| e.to_string())
        } else {
            toml::from_str(&text).map_err(|e| e.to_string())
        };
        parsed.map_err(|e| Failure::Config(format!("{}: {e}", path.display())))
    }
}

/// Everything a command needs, after merging.
#[derive(Debug, Clone)]
pub struct Settings {
    pub pipeline: PipelineConfig,
    pub data: DataPaths,
    pub out: PathBuf,
    pub llm: Endpoint,
    pub sqltool: Endpoint,
    pub limit: Option<usize>,
    pub timer: TimerKind,
    pub capture_prompts: bool,
    pub run: Option<PathBuf>,
    pub report: Option<PathBuf>,
}

impl Settings {
    pub fn resolve(args: &CommonArgs) -> Result<Self, Failure> {
        let file = match &args.config {
            Some(p) => FileConfig::load(p)?,
            None => FileConfig::default(),
        };
        let mut p = file.pipeline;
        if let Some(v) = args.max_try_times {
            p.max_try_times = v;
        }
        if let Some(v) = args.beam_size {
            p.beam_size = v;
        }
        if let Some(v) = args.n_variants {
            p.n_variants = v;
        }
        if let Some(v) = args.parallelism {
            p.parallelism = v;
        }
        if args.no_cot {
            p.use_cot = false;
        }
        if args.no_reflexion {
            p.use_reflexion = false;
        }
        if args.no_mcs {
            p.use_mcs = false;
        }
        if args.require_nonempty {
            p.require_nonempty = true;
        }
        if args.no_require_nonempty {
            p.require_nonempty = false;
        }
        p.validate().map_err(Failure::Config)?;

        let pick = |flag: &Option<PathBuf>, file: &Option<PathBuf>| flag.clone().or_else(|| file.clone());
        let data = DataPaths {
            questions: pick(&args.questions, &file.data.questions),
            tables: pick(&args.tables, &file.data.tables),
            db_root: pick(&args.db_root, &file.data.db_root),
            train_questions: pick(&args.train_questions, &file.data.train_questions),
            out: pick(&args.out, &file.data.out),
            store: pick(&args.store, &file.data.store),
            prompts: pick(&args.prompts, &file.data.prompts),
        };
        let mut llm = file.llm;
        if args.scripted_llm.is_some() {
            llm.scripted = args.scripted_llm.clone();
        }
        let mut sqltool = file.sqltool;
        if args.scripted_sqltool.is_some() {
            sqltool.scripted = args.scripted_sqltool.clone();
        }
        Ok(Self {
            pipeline: p,
            out: data.out.clone().unwrap_or_else(|| PathBuf::from("out")),
            data,
            llm,
            sqltool,
            limit: args.limit.or(file.limit),
            timer: args.timer.or(file.timer).unwrap_or(TimerKind::Wall),
            capture_prompts: args.capture_prompts,
            run: args.run.clone(),
            report: args.report.clone(),
        })
    }

    pub fn store_path(&self) -> PathBuf {
        self.data
            .store
            .clone()
            .unwrap_or_else(|| self.out.join("error_record.jsonl"))
    }

    pub fn run_path(&self) -> PathBuf {
        self.run.clone().unwrap_or_else(|| self.out.join("run.jsonl"))
    }

    pub fn report_path(&self) -> PathBuf {
        self.report.clone().unwrap_or_else(|| self.out.join("report.json"))
    }

    /// A configured path or a configuration error naming the missing setting.
    pub fn require<'a>(&self, value: &'a Option<PathBuf>, name: &str) -> Result<&'a Path, Failure> {
        value.as_deref().ok_or_else(|| {
            Failure::Config(format!(
                "--{name} is required (or set data.{} in the config file)",
                name.replace('-', "_")
            ))
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(argv: &[&str]) -> CommonArgs {
        let cli = Cli::try_parse_from(argv).unwrap();
        cli.command.args().clone()
    }

    #[test]
    fn flags_beat_file_beat_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        std::fs::write(
            &path,
            "limit = 7\n[pipeline]\nmax_try_times = 5\nbeam_size = 2\nuse_cot = false\n[data]\nout = \"file_out\"\n[llm]\nmodel = \"m\"\n",
        )
        .unwrap();
        let p = path.to_str().unwrap();
        let s = Settings::resolve(&parse(&["sqlfix", "run", "--config", p, "--beam-size", "6"])).unwrap();
        assert_eq!(s.pipeline.max_try_times, 5);
        assert_eq!(s.pipeline.beam_size, 6);
        assert_eq!(s.pipeline.n_variants, 3);
        assert!(!s.pipeline.use_cot);
        assert_eq!(s.limit, Some(7));
        assert_eq!(s.out, PathBuf::from("file_out"));
        assert_eq!(s.llm.model, "m");
        assert_eq!(s.llm.api_key_env, "OPENAI_API_KEY");

        let s = Settings::resolve(&parse(&["sqlfix", "run", "--config", p, "--out", "o", "--limit", "1"])).unwrap();
        assert_eq!(s.out, PathBuf::from("o"));
        assert_eq!(s.limit, Some(1));
        assert_eq!(s.store_path(), PathBuf::from("o/error_record.jsonl"));
    }

    #[test]
    fn require_nonempty_pair_last_wins() {
        let s = Settings::resolve(&parse(&["sqlfix", "run", "--no-require-nonempty"])).unwrap();
        assert!(!s.pipeline.require_nonempty);
        let s = Settings::resolve(&parse(&[
            "sqlfix",
            "run",
            "--no-require-nonempty",
            "--require-nonempty",
        ]))
        .unwrap();
        assert!(s.pipeline.require_nonempty);
        let s = Settings::resolve(&parse(&["sqlfix", "run"])).unwrap();
        assert!(s.pipeline.require_nonempty);
    }

    #[test]
    fn bad_values_are_config_errors() {
        assert!(matches!(
            Settings::resolve(&parse(&["sqlfix", "run", "--max-try-times", "0"])),
            Err(Failure::Config(_))
        ));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        std::fs::write(&path, "[pipeline]\nmax_tries = 2\n").unwrap();
        assert!(matches!(
            Settings::resolve(&parse(&["sqlfix", "run", "--config", path.to_str().unwrap()])),
            Err(Failure::Config(_))
        ));
        assert!(matches!(
            Settings::resolve(&parse(&["sqlfix", "run", "--config", "/nonexistent/c.toml"])),
            Err(Failure::Io(_))
        ));
    }

    #[test]
    fn json_config_is_accepted() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(&path, r#"{"pipeline": {"n_variants": 2}, "timer": "fixed"}"#).unwrap();
        let s = Settings::resolve(&parse(&["sqlfix", "evaluate", "--config", path.to_str().unwrap()])).unwrap();
        assert_eq!(s.pipeline.n_variants, 2);
        assert_eq!(s.timer, TimerKind::Fixed);
    }
}
