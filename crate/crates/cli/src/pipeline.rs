//! Multi-stage runs from a key-value config file:
//!
//! ```text
//! # comments and blank lines are ignored
//! threads = 4
//! seed = 7
//! stage = synth --n-src 1000 --n-planted 500 --dim 64 -o data
//! stage = embed data/src.tsv --dim 64 -o work/src.bmem
//! ```
//!
//! Stage arguments are split on whitespace (no quoting). Relative paths are
//! resolved against the directory holding the config file.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Component, Path, PathBuf};

use clap::Parser;
use log::info;

use crate::args::{Cli, Command, StatsCommand};
use crate::commands::{dispatch, Context, SYNTH_FILES};
use crate::error::{CliError, CliResult};

#[derive(Debug)]
pub struct Stage {
    pub line: usize,
    pub name: String,
    pub seed: Option<u64>,
    pub command: Command,
}

#[derive(Debug, Default)]
pub struct PipelineConfig {
    pub threads: Option<usize>,
    pub seed: Option<u64>,
    pub stages: Vec<Stage>,
}

fn parse_error(path: &Path, line: usize, message: impl Into<String>) -> CliError {
    bitext::Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
    .into()
}

impl PipelineConfig {
    pub fn parse(text: &str, path: &Path) -> CliResult<Self> {
        let mut cfg = PipelineConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(parse_error(path, line_no, "expected key = value"));
            };
            let (key, value) = (key.trim(), value.trim());
            match key {
                "threads" => {
                    let n = value
                        .parse()
                        .map_err(|_| parse_error(path, line_no, format!("invalid thread count {value:?}")))?;
                    cfg.threads = Some(n);
                }
                "seed" => {
                    let s = value
                        .parse()
                        .map_err(|_| parse_error(path, line_no, format!("invalid seed {value:?}")))?;
                    cfg.seed = Some(s);
                }
                "stage" => cfg.stages.push(parse_stage(value, path, line_no)?),
                other => {
                    return Err(parse_error(path, line_no, format!("unknown key {other:?}")));
                }
            }
        }
        if cfg.stages.is_empty() {
            return Err(bitext::Error::Validation(format!(
                "{}: no stages configured",
                path.display()
            ))
            .into());
        }
        Ok(cfg)
    }

    pub fn read(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path).map_err(|e| {
            CliError::from(bitext::Error::Io {
                path: path.to_path_buf(),
                source: e,
            })
        })?;
        Self::parse(&text, path)
    }

    /// Checks that every stage input exists under `base` or is written by an
    /// earlier stage.
    pub fn validate_order(&self, base: &Path) -> CliResult {
        let mut produced: BTreeSet<PathBuf> = BTreeSet::new();
        for stage in &self.stages {
            let (inputs, outputs) = io_paths(&stage.command);
            for input in inputs {
                let key = normalize(&input);
                if !produced.contains(&key) && !base.join(&input).exists() {
                    return Err(bitext::Error::Validation(format!(
                        "stage {:?} (line {}) reads {} which is neither an existing file nor produced by an earlier stage",
                        stage.name,
                        stage.line,
                        input.display()
                    ))
                    .into());
                }
            }
            produced.extend(outputs.iter().map(|p| normalize(p)));
        }
        Ok(())
    }
}

fn parse_stage(value: &str, path: &Path, line_no: usize) -> CliResult<Stage> {
    let argv = std::iter::once("bitext").chain(value.split_whitespace());
    let cli = Cli::try_parse_from(argv).map_err(|e| {
        let msg = e.to_string();
        let first = msg.lines().next().unwrap_or("").trim_start_matches("error: ");
        parse_error(path, line_no, format!("invalid stage: {first}"))
    })?;
    if cli.threads.is_some() {
        return Err(parse_error(path, line_no, "set threads at the top level, not per stage"));
    }
    if matches!(cli.command, Command::Pipeline(_)) {
        return Err(parse_error(path, line_no, "pipelines cannot be nested"));
    }
    let name = value.split_whitespace().next().unwrap_or("").to_string();
    Ok(Stage {
        line: line_no,
        name,
        seed: cli.seed,
        command: cli.command,
    })
}

/// Lexical normalization so `a/./b` and `a/b` compare equal.
fn normalize(p: &Path) -> PathBuf {
    let mut out = PathBuf::new();
    for c in p.components() {
        match c {
            Component::CurDir => {}
            Component::ParentDir => {
                if !out.pop() {
                    out.push("..");
                }
            }
            other => out.push(other),
        }
    }
    out
}

/// `(inputs, outputs)` of a subcommand.
pub fn io_paths(command: &Command) -> (Vec<PathBuf>, Vec<PathBuf>) {
    fn opt(p: &Option<PathBuf>) -> Vec<PathBuf> {
        p.iter().cloned().collect()
    }
    match command {
        Command::Preprocess(a) => {
            let mut inputs = a.inputs.clone();
            inputs.extend(
                a.lid_train
                    .iter()
                    .filter_map(|s| s.split_once('=').map(|(_, p)| PathBuf::from(p))),
            );
            let mut outputs = a.outputs.clone();
            outputs.extend(opt(&a.report));
            (inputs, outputs)
        }
        Command::BpeLearn(a) => (a.inputs.clone(), vec![a.output.clone()]),
        Command::BpeApply(a) => (vec![a.input.clone(), a.model.clone()], opt(&a.output)),
        Command::Embed(a) => {
            let mut inputs = vec![a.input.clone()];
            inputs.extend(opt(&a.bpe));
            inputs.extend(opt(&a.vectors));
            (inputs, vec![a.output.clone()])
        }
        Command::IndexBuild(a) => (vec![a.input.clone()], vec![a.output.clone()]),
        Command::IndexSearch(a) => (vec![a.index.clone(), a.queries.clone()], opt(&a.output)),
        Command::Filter(a) => {
            let mut outputs = vec![a.output.clone()];
            outputs.extend(opt(&a.scores));
            outputs.extend(opt(&a.out_src));
            outputs.extend(opt(&a.out_tgt));
            (
                vec![a.src.clone(), a.tgt.clone(), a.src_emb.clone(), a.tgt_emb.clone()],
                outputs,
            )
        }
        Command::Mine(a) => {
            let mut inputs = vec![a.src_emb.clone(), a.tgt_emb.clone()];
            inputs.extend(opt(&a.threshold_from));
            inputs.extend(opt(&a.ivf));
            (inputs, vec![a.output.clone()])
        }
        Command::Sweep(a) => (vec![a.pairs.clone()], opt(&a.output)),
        Command::Stats(StatsCommand::Lengths { input, output, .. }) => {
            (vec![input.clone()], opt(output))
        }
        Command::Eval(a) => (vec![a.pairs.clone(), a.gold.clone()], opt(&a.output)),
        Command::Tune(a) => (vec![a.candidates.clone(), a.gold.clone()], opt(&a.output)),
        Command::Synth(a) => (
            Vec::new(),
            SYNTH_FILES.iter().map(|f| a.output.join(f)).collect(),
        ),
        Command::Pipeline(a) => (vec![a.config.clone()], Vec::new()),
    }
}

/// Runs every stage from the config file's directory. `fallback_seed` applies
/// when neither the stage nor the config sets one.
pub fn run(cfg: &PipelineConfig, config_path: &Path, fallback_seed: u64, dry_run: bool) -> CliResult {
    let base = config_path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    cfg.validate_order(base)?;
    if dry_run {
        info!("pipeline\t{} stages\tvalid", cfg.stages.len());
        return Ok(());
    }
    std::env::set_current_dir(base).map_err(|e| {
        CliError::from(bitext::Error::Io {
            path: base.to_path_buf(),
            source: e,
        })
    })?;
    let n = cfg.stages.len();
    for (i, stage) in cfg.stages.iter().enumerate() {
        let ctx = Context {
            seed: stage.seed.or(cfg.seed).unwrap_or(fallback_seed),
        };
        info!("pipeline\tstage {}/{}\t{}", i + 1, n, stage.name);
        dispatch(&stage.command, &ctx)?;
    }
    Ok(())
}
