//! Operator CLI.
//!
//! Exit status: 0 on success, 1 on validation failure, 2 on I/O failure.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use piiqa_core::agreement::{pair_agreement, task_agreement};
use piiqa_core::config::PipelineConfig;
use piiqa_core::metrics::{report_tsv, FprMode, Grain, GroupBy};
use piiqa_core::rca::{confusion_pairs, confusion_tsv, distributions, distributions_tsv, rca_tsv, rca_report, Axis, Window};
use piiqa_core::synth::TemplateRegistry;
use piiqa_core::synth::{derive_seed, gen_corpus, CorpusSpec, PUBLISHED_VOLUMES};
use piiqa_core::workflow::{Phase, SeededSampler, TaskStatus};
use piiqa_core::TaskId;

use crate::store::{Filter, Store, StoreError};

#[derive(Debug, Parser)]
#[command(name = "piiqa", version, about = "Quality pipeline for multilingual PII span annotation")]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Global {
    /// Store directory.
    #[arg(long, global = true, default_value = "piiqa-store")]
    pub store: PathBuf,
    /// TOML file with `[pipeline]` and `[corpus]` tables.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed for generation and QA sampling [default: 0].
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Restrict to one locale.
    #[arg(long, global = true)]
    pub locale: Option<String>,
    /// Restrict to one phase: `pilot`, `training` or `production`.
    #[arg(long, global = true)]
    pub phase: Option<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Import exchange files into the store.
    Ingest { files: Vec<PathBuf> },
    /// Write the store as an exchange file.
    Export {
        /// Output file; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write the task transition log here.
        #[arg(long)]
        transitions: Option<PathBuf>,
    },
    /// Per-task IRA, or the pairwise breakdown of one task.
    Agree {
        /// Show the pairwise breakdown of this task.
        #[arg(long)]
        task: Option<String>,
        /// Print the annotator agreement matrix instead.
        #[arg(long)]
        matrix: bool,
    },
    /// Route dual-annotated tasks to acceptance or arbitration.
    Route {
        /// Timestamp recorded on the transitions.
        #[arg(long, default_value_t = 0)]
        at: u64,
    },
    /// Recall and FPR against the ground truth.
    Metrics {
        /// `fine` or `coarse`; both when absent.
        #[arg(long)]
        grain: Option<String>,
        /// Comma-separated subset of `locale,phase`, or `none`.
        #[arg(long, default_value = "locale,phase")]
        group_by: String,
        /// `row` or `type_instance`; overrides the config.
        #[arg(long)]
        fpr_mode: Option<String>,
    },
    /// Disagreement categories and confusion pairs.
    Rca {
        /// `START:END` review timestamps, end exclusive.
        #[arg(long)]
        window: Option<String>,
        /// Number of confusion pairs to list; overrides the config.
        #[arg(long)]
        top_k: Option<usize>,
    },
    /// Domain, length-bin and PII-category proportions per locale group.
    Distributions {
        /// `domain`, `length_bin` or `pii_category`; all when absent.
        #[arg(long)]
        axis: Option<String>,
    },
    /// Generate a synthetic corpus as an exchange file.
    Gen {
        #[command(flatten)]
        corpus: CorpusArgs,
        /// Output file; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the three phases end to end and write the reports.
    Simulate {
        #[command(flatten)]
        corpus: CorpusArgs,
        #[arg(long, default_value = "piiqa-sim")]
        out_dir: PathBuf,
    },
    /// Serve the HTTP API.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: String,
    },
}

#[derive(Debug, Args)]
pub struct CorpusArgs {
    /// Tasks per phase and locale.
    #[arg(long)]
    pub per_phase: Option<usize>,
    /// Comma-separated locale codes.
    #[arg(long)]
    pub locales: Option<String>,
    /// Use the published per-locale task volumes.
    #[arg(long)]
    pub published_volumes: bool,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    #[serde(default)]
    pub pipeline: PipelineConfig,
    pub corpus: Option<CorpusSpec>,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Io(_) => 2,
        }
    }
}

impl From<StoreError> for CliError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::Io { .. } => CliError::Io(e.to_string()),
            other => CliError::Validation(other.to_string()),
        }
    }
}

/// Write to stdout; a closed pipe (`piiqa export | head`) is not an error.
fn write_stdout(text: &str) -> Result<(), CliError> {
    use std::io::Write;
    let mut out = std::io::stdout().lock();
    match out.write_all(text.as_bytes()).and_then(|_| out.flush()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(CliError::Io(format!("stdout: {e}"))),
        _ => Ok(()),
    }
}

macro_rules! emit {
    ($($arg:tt)*) => {
        write_stdout(&format!($($arg)*))?
    };
}

fn invalid(e: impl ToString) -> CliError {
    CliError::Validation(e.to_string())
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |e| CliError::Io(format!("{}: {e}", path.display()))
}

pub fn load_config(path: Option<&Path>) -> Result<ConfigFile, CliError> {
    let Some(path) = path else {
        return Ok(ConfigFile::default());
    };
    let text = fs::read_to_string(path).map_err(io(path))?;
    let cfg: ConfigFile = toml::from_str(&text).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
    cfg.pipeline.validate().map_err(invalid)?;
    Ok(cfg)
}

fn filter(global: &Global, store: &Store) -> Result<Filter, CliError> {
    let locale = match &global.locale {
        Some(l) => Some(store.registry().resolve_locale(l).map_err(invalid)?),
        None => None,
    };
    let phase = match &global.phase {
        Some(p) => Some(p.parse::<Phase>().map_err(invalid)?),
        None => None,
    };
    Ok(Filter { locale, phase })
}

fn corpus_spec(global: &Global, cfg: &ConfigFile, args: &CorpusArgs) -> Result<CorpusSpec, CliError> {
    let seed = global.seed.unwrap_or(0);
    let mut spec = if args.published_volumes {
        CorpusSpec::published_volumes(seed)
    } else if let Some(spec) = &cfg.corpus {
        spec.clone()
    } else {
        let codes: Vec<&str> = PUBLISHED_VOLUMES.iter().map(|(c, _)| *c).collect();
        CorpusSpec::small(seed, &codes, 20)
    };
    if let Some(s) = global.seed {
        spec.seed = s;
    }
    if let Some(list) = &args.locales {
        let n = args.per_phase.unwrap_or(20);
        spec.ranges.clear();
        spec.locales = list
            .split(',')
            .filter(|l| !l.is_empty())
            .map(|l| (l.trim().to_string(), [n; 3]))
            .collect();
    } else if let Some(n) = args.per_phase {
        spec.ranges.clear();
        for counts in spec.locales.values_mut() {
            *counts = [n; 3];
        }
    }
    if let Some(l) = &global.locale {
        spec.locales.retain(|code, _| code == l);
        if spec.locales.is_empty() {
            return Err(invalid(format!("locale {l} is not part of the corpus spec")));
        }
    }
    if let Some(p) = &global.phase {
        let phase: Phase = p.parse().map_err(invalid)?;
        let keep = Phase::ALL.iter().position(|x| *x == phase).expect("known phase");
        for counts in spec.locales.values_mut() {
            for (i, c) in counts.iter_mut().enumerate() {
                if i != keep {
                    *c = 0;
                }
            }
        }
    }
    spec.bins = cfg.pipeline.length_bins.clone();
    Ok(spec)
}

fn write_out(out: Option<&Path>, body: &str) -> Result<(), CliError> {
    match out {
        Some(path) => fs::write(path, body).map_err(io(path)),
        None => {
            emit!("{body}");
            Ok(())
        }
    }
}

/// Generated corpus as exchange text, tasks in the `assigned` state.
pub fn gen_exchange(spec: &CorpusSpec, pipeline: PipelineConfig) -> Result<String, CliError> {
    let mut store = Store::in_memory(pipeline)?;
    let corpus = gen_corpus(spec, store.registry(), TemplateRegistry::builtin()).map_err(invalid)?;
    store.load_corpus(&corpus, TaskStatus::Assigned).map_err(invalid)?;
    Ok(store.export_string(&Filter::default()))
}

/// Run one command; output goes to stdout, diagnostics to stderr.
pub fn run(cli: Cli) -> Result<(), CliError> {
    let g = &cli.global;
    let cfg = load_config(g.config.as_deref())?;
    match cli.command {
        Command::Gen { corpus, out } => {
            let spec = corpus_spec(g, &cfg, &corpus)?;
            let text = gen_exchange(&spec, cfg.pipeline)?;
            write_out(out.as_deref(), &text)
        }
        Command::Simulate { corpus, out_dir } => {
            let spec = corpus_spec(g, &cfg, &corpus)?;
            let run = crate::simulate::run(&spec, cfg.pipeline).map_err(invalid)?;
            let written = run.write_reports(&out_dir).map_err(io(&out_dir))?;
            for p in written {
                eprintln!("wrote {}", p.display());
            }
            Ok(())
        }
        command => {
            let mut store = Store::open(&g.store, cfg.pipeline)?;
            let f = filter(g, &store)?;
            run_store_command(command, g, &mut store, &f)
        }
    }
}

fn run_store_command(command: Command, g: &Global, store: &mut Store, f: &Filter) -> Result<(), CliError> {
    match command {
        Command::Ingest { files } => {
            if files.is_empty() {
                return Err(invalid("no input files"));
            }
            let mut rejected = 0;
            for path in &files {
                let report = store.import_file(path)?;
                rejected += report.rejected.len();
                emit!("file\t{}\n{}", path.display(), report.render());
            }
            if rejected > 0 {
                return Err(invalid(format!("{rejected} record(s) rejected")));
            }
            Ok(())
        }
        Command::Export { out, transitions } => {
            if let Some(path) = transitions {
                fs::write(&path, store.transitions_string(f)).map_err(io(&path))?;
            }
            match out {
                Some(path) => Ok(store.export_file(&path, f)?),
                None => write_out(None, &store.export_string(f)),
            }
        }
        Command::Agree { task, matrix } => {
            let tau = store.config().tau;
            if matrix {
                emit!("{}", store.agreement_matrix(f).to_tsv());
                return Ok(());
            }
            if let Some(id) = task {
                let id = TaskId::new(id);
                if store.corpus().task(&id).is_none() {
                    return Err(invalid(format!("unknown task {id}")));
                }
                let subs = store.corpus().submissions_for(&id);
                let ira = task_agreement(&subs, tau).map_err(|e| invalid(format!("task {id}: {e}")))?;
                let mut out = String::from("left\tright\tspan\ttype\ttext\toverall\n");
                for (i, a) in subs.iter().enumerate() {
                    for b in &subs[i + 1..] {
                        let br = pair_agreement(a, b, tau).map_err(invalid)?;
                        let _ = writeln!(
                            out,
                            "{}\t{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}",
                            a.id, b.id, br.span_score, br.type_score, br.text_score, br.overall
                        );
                    }
                }
                let _ = writeln!(out, "ira\t{ira:.6}");
                emit!("{out}");
                return Ok(());
            }
            let mut out = String::from("task_id\tlocale\tphase\tsubmissions\tira\n");
            for t in store.corpus().tasks().filter(|t| f.matches(t)) {
                let subs = store.corpus().submissions_for(&t.id);
                let ira = task_agreement(&subs, tau).ok();
                let _ = writeln!(
                    out,
                    "{}\t{}\t{}\t{}\t{}",
                    t.id,
                    t.locale,
                    t.phase,
                    subs.len(),
                    piiqa_core::metrics::fmt_ratio(ira)
                );
            }
            emit!("{out}");
            Ok(())
        }
        Command::Route { at } => {
            let mut sampler = SeededSampler::new(derive_seed(g.seed.unwrap_or(0), "routing"));
            let routed = store.route_pending(&mut sampler, f, at).map_err(invalid)?;
            store.flush()?;
            let mut out = String::from("task_id\troute\treason\tira\tthreshold\n");
            for r in routed {
                let _ = writeln!(
                    out,
                    "{}\t{}\t{}\t{:.6}\t{:.6}",
                    r.task_id,
                    label(&r.decision.route),
                    label(&r.decision.reason),
                    r.decision.ira,
                    r.decision.threshold
                );
            }
            emit!("{out}");
            Ok(())
        }
        Command::Metrics {
            grain,
            group_by,
            fpr_mode,
        } => {
            let grain = grain.map(|s| s.parse::<Grain>()).transpose().map_err(invalid)?;
            let mut gb = GroupBy::NONE;
            for part in group_by.split(',').filter(|p| !p.is_empty()) {
                match part {
                    "locale" => gb.locale = true,
                    "phase" => gb.phase = true,
                    "none" => {}
                    other => return Err(invalid(format!("cannot group by {other:?}"))),
                }
            }
            let mode = match fpr_mode.as_deref() {
                None => store.config().fpr_mode,
                Some("row") => FprMode::Row,
                Some("type_instance") => FprMode::TypeInstance,
                Some(other) => return Err(invalid(format!("unknown fpr mode {other:?}"))),
            };
            let rows = piiqa_core::metrics::row_outcomes(&filtered(store, f), store.registry());
            let reports: Vec<_> = piiqa_core::metrics::metrics_report(&rows, gb, mode)
                .into_iter()
                .filter(|r| grain.is_none_or(|g| r.grain == g))
                .collect();
            emit!("{}", report_tsv(&reports));
            Ok(())
        }
        Command::Rca { window, top_k } => {
            let window = match window {
                None => Window { start: 0, end: u64::MAX },
                Some(w) => {
                    let (a, b) = w.split_once(':').ok_or_else(|| invalid("window must be START:END"))?;
                    let start = a.parse().map_err(invalid)?;
                    let end = b.parse().map_err(invalid)?;
                    if start >= end {
                        return Err(invalid("window start must precede its end"));
                    }
                    Window { start, end }
                }
            };
            let cfg = store.config();
            let corpus = filtered(store, f);
            let k = top_k.unwrap_or(cfg.top_k);
            let report = rca_report(&corpus, window, cfg.tau, k);
            emit!("{}", rca_tsv(&report));
            emit!("\n");
            emit!("{}", confusion_tsv(&confusion_pairs(&corpus, cfg.tau, k)));
            Ok(())
        }
        Command::Distributions { axis } => {
            let axes = match axis {
                Some(a) => vec![a.parse::<Axis>().map_err(invalid)?],
                None => vec![Axis::Domain, Axis::LengthBin, Axis::PiiCategory],
            };
            let corpus = filtered(store, f);
            let mut reports = Vec::new();
            for a in axes {
                reports.extend(distributions(&corpus, store.registry(), a, &store.config().length_bins));
            }
            emit!("{}", distributions_tsv(&reports));
            Ok(())
        }
        Command::Serve { addr } => {
            let shared = Arc::new(RwLock::new(std::mem::replace(
                store,
                Store::in_memory(PipelineConfig::default())?,
            )));
            let rt = tokio::runtime::Runtime::new().map_err(|e| CliError::Io(e.to_string()))?;
            rt.block_on(crate::api::serve(shared, &addr))
                .map_err(|e| CliError::Io(format!("{addr}: {e}")))
        }
        Command::Gen { .. } | Command::Simulate { .. } => unreachable!("handled without a store"),
    }
}

fn filtered(store: &Store, f: &Filter) -> piiqa_core::Corpus {
    let mut c = store.corpus().clone();
    if !f.is_empty() {
        c.retain_tasks(|t| f.matches(t));
    }
    c
}

/// Serialized name of a unit enum variant.
fn label<T: serde::Serialize>(v: &T) -> String {
    match serde_json::to_value(v) {
        Ok(serde_json::Value::String(s)) => s,
        _ => String::new(),
    }
}
