//! `retainkv` command-line front end.
//!
//! Every command reads one JSON run config (`--config`, optional) plus
//! dotted overrides such as `--eviction.b 128`, and writes its outputs to
//! the paths given. Exit codes: 0 success, 2 config error, 3 data or file
//! error, 1 anything else.

mod config;

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use crate::backbone::{build_matched_filter, NeedleLayout, Weights, DEFAULT_MATCH_GAIN};
use crate::cache_theory::theorem_check;
use crate::error::{Error, Result};
use crate::eviction::{
    chunked_prefill_traced, chunked_prefill_with_eviction, decode, locret_q_prefill,
    write_trace_csv, PolicyKind,
};
use crate::harness::report::{write_csv, write_json};
use crate::harness::{
    compression_ratio, consistency_curve, gen_passkey, gen_passkey_set, h2o_scores,
    locret_scores, passkey_eval_jobs, sirllm_scores, snapkv_scores, stabilizer_ablation_jobs,
    trace_retained, ABLATION_CSV_HEADER, ABLATION_SUMMARY_HEADER, CONSISTENCY_CSV_HEADER,
    PASSKEY_CSV_HEADER,
};
use crate::numerics::{Precision, Real};
use crate::retaining::{read_jsonl, train, write_jsonl, HeadSet, TrainingExample};

pub use config::{apply_override, extract_overrides, IoConfig, RunConfig};

const OVERRIDE_HELP: &str = "\
Config overrides:
  --<section>.<key> <VALUE>   Set any run-config key, e.g. --eviction.b 128,
                              --training.total_steps 300, --task.haystack_len 512.
                              VALUE is parsed as JSON, falling back to a string;
                              --eviction.policy random is shorthand for
                              --eviction.policy '{\"kind\":\"random\"}'.
  --seed <N>                  Top-level seed (head init, training order, theory check).

Environment:
  RETAINKV_PRECISION          single | double (default double)";

#[derive(Debug, Parser)]
#[command(name = "retainkv", version, about = "Trained retaining-head KV-cache eviction", after_help = OVERRIDE_HELP)]
pub struct Cli {
    /// JSON run config with sections model, training, eviction, task, io, seed.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Worker threads for trial-level parallelism in passkey-eval and ablate-stabilizers.
    #[arg(long, global = true, default_value_t = 1)]
    pub jobs: usize,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ModelKind {
    Random,
    MatchedFilter,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ScorerKind {
    Locret,
    Sirllm,
    H2o,
    Snapkv,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write passkey training examples as JSONL.
    GenData {
        #[arg(long)]
        out: Option<PathBuf>,
        /// Number of examples (task seeds task.seed, task.seed + 1, ...).
        #[arg(long, default_value_t = 64)]
        count: usize,
    },
    /// Write a backbone weights file.
    InitModel {
        #[arg(long, value_enum)]
        kind: ModelKind,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Match logit gain of the matched-filter construction.
        #[arg(long, default_value_t = DEFAULT_MATCH_GAIN)]
        gain: f64,
    },
    /// Train retaining heads on a frozen backbone.
    TrainHead {
        #[arg(long)]
        weights: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        /// Output headset file.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Loss-curve CSV (step,loss).
        #[arg(long)]
        curve: Option<PathBuf>,
    },
    /// Chunked prefill with eviction, then greedy decoding.
    Infer {
        #[arg(long)]
        weights: Option<PathBuf>,
        #[arg(long)]
        heads: Option<PathBuf>,
        /// Prompt token file (JSON array of integers).
        #[arg(long)]
        prompt: Option<PathBuf>,
        /// Query token file, required by the locret_q policy.
        #[arg(long)]
        query: Option<PathBuf>,
        #[arg(long, default_value_t = 8)]
        max_new: usize,
        /// Metrics JSON; decoded tokens always go to stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Prefix-vs-full top-set overlap of a scorer.
    Consistency {
        #[arg(long)]
        weights: Option<PathBuf>,
        #[arg(long)]
        heads: Option<PathBuf>,
        /// Token file; without it a passkey prompt is generated from the task section.
        #[arg(long)]
        prompt: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = ScorerKind::Locret)]
        scorer: ScorerKind,
        /// Prefix lengths, comma separated; default is eight evenly spaced lengths.
        #[arg(long, value_delimiter = ',')]
        grid: Vec<usize>,
        #[arg(long, default_value_t = 0.1)]
        top_frac: f64,
        /// Query window of the snapkv scorer.
        #[arg(long, default_value_t = 32)]
        window: usize,
        /// Report CSV.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sweep the stabilizer length over generated passkey tasks.
    AblateStabilizers {
        #[arg(long)]
        weights: Option<PathBuf>,
        #[arg(long)]
        heads: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', default_value = "0,32,128,512")]
        grid: Vec<usize>,
        /// Number of tasks (task seeds task.seed, task.seed + 1, ...).
        #[arg(long, default_value_t = 10)]
        tasks: usize,
        /// Per-task CSV.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Per-n_s summary CSV.
        #[arg(long)]
        summary: Option<PathBuf>,
    },
    /// Record every eviction decision of one prefill.
    Trace {
        #[arg(long)]
        weights: Option<PathBuf>,
        #[arg(long)]
        heads: Option<PathBuf>,
        /// Token file; without it a passkey prompt is generated from the task section.
        #[arg(long)]
        prompt: Option<PathBuf>,
        /// Full decision CSV.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Retention matrix CSV of one (layer, KV head).
        #[arg(long)]
        matrix: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        layer: usize,
        #[arg(long, default_value_t = 0)]
        kv_head: usize,
    },
    /// Passkey retrieval accuracy over a budget grid.
    PasskeyEval {
        #[arg(long)]
        weights: Option<PathBuf>,
        #[arg(long)]
        heads: Option<PathBuf>,
        /// Budgets, comma separated; default is eviction.b.
        #[arg(long, value_delimiter = ',')]
        budgets: Vec<usize>,
        #[arg(long, default_value_t = 50)]
        trials: usize,
        /// Report JSON.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Report CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Check budget and monotone-eviction conditions of streaming top-b.
    TheoryCheck {
        #[arg(long, default_value_t = 1000)]
        trials: usize,
        #[arg(long, default_value_t = 64)]
        max_n: usize,
        #[arg(long, default_value_t = 16)]
        max_b: usize,
        /// Report JSON; printed to stdout as well.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Exit code for an error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => 2,
        Error::Data(_) | Error::Format(_) | Error::Shape(_) | Error::Io(_) | Error::Json(_) => 3,
        Error::Eval(_) | Error::Contract(_) => 1,
    }
}

/// Runs the tool on `args` (including the program name) and returns the exit code.
pub fn main_with_args(args: Vec<String>) -> i32 {
    let (rest, overrides) = match extract_overrides(args) {
        Ok(x) => x,
        Err(e) => return report(&e),
    };
    let cli = match Cli::try_parse_from(rest) {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return 0;
        }
        Err(e) => {
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("invalid arguments");
            eprintln!("error[usage] {}", first.trim_start_matches("error: "));
            return 2;
        }
    };
    let result = RunConfig::load(cli.config.as_deref(), &overrides).and_then(|cfg| {
        let precision = Precision::from_env().map_err(Error::config)?;
        match precision {
            Precision::Single => run::<f32>(&cli, &cfg),
            Precision::Double => run::<f64>(&cli, &cfg),
        }
    });
    match result {
        Ok(()) => 0,
        Err(e) => report(&e),
    }
}

fn report(e: &Error) -> i32 {
    let msg = e.to_string().replace(['\n', '\r'], " ");
    eprintln!("error[{}] {msg}", e.kind());
    exit_code(e)
}

fn need(flag: &Option<PathBuf>, io: &Option<PathBuf>, name: &str) -> Result<PathBuf> {
    flag.clone()
        .or_else(|| io.clone())
        .ok_or_else(|| Error::config(format!("missing --{name} (or io.{name} in the config)")))
}

fn need_out(flag: &Option<PathBuf>, cfg: &RunConfig) -> Result<PathBuf> {
    need(flag, &cfg.io.out, "out")
}

pub fn read_tokens(path: &Path) -> Result<Vec<u32>> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::data(format!("cannot read {}: {e}", path.display())))?;
    let toks: Vec<u32> = serde_json::from_str(&text)
        .map_err(|e| Error::data(format!("{}: expected a JSON array of token ids: {e}", path.display())))?;
    if toks.is_empty() {
        return Err(Error::data(format!("{}: empty token list", path.display())));
    }
    Ok(toks)
}

fn load_weights<T: Real>(flag: &Option<PathBuf>, cfg: &RunConfig) -> Result<Weights<T>> {
    Weights::load(need(flag, &cfg.io.weights, "weights")?)
}

/// Heads are loaded when a path is given, and required by locret policies.
fn load_heads<T: Real>(
    flag: &Option<PathBuf>,
    cfg: &RunConfig,
    required: bool,
) -> Result<Option<HeadSet<T>>> {
    match flag.clone().or_else(|| cfg.io.heads.clone()) {
        Some(p) => Ok(Some(HeadSet::load(p)?)),
        None if required => Err(Error::config("missing --heads (or io.heads in the config)")),
        None => Ok(None),
    }
}

fn prompt_or_task<T: Real>(
    flag: &Option<PathBuf>,
    cfg: &RunConfig,
    weights: &Weights<T>,
) -> Result<Vec<u32>> {
    match flag.clone().or_else(|| cfg.io.prompt.clone()) {
        Some(p) => read_tokens(&p),
        None => {
            let layout = NeedleLayout::for_vocab(weights.config.vocab)?;
            Ok(gen_passkey(&cfg.task, &layout)?.example.prompt)
        }
    }
}

fn run<T: Real>(cli: &Cli, cfg: &RunConfig) -> Result<()> {
    let echo = serde_json::to_value(cfg)?;
    match &cli.command {
        Command::GenData { out, count } => {
            let layout = NeedleLayout::for_vocab(cfg.model.vocab)?;
            let set = gen_passkey_set(&cfg.task, &layout, *count)?;
            let examples: Vec<TrainingExample> = set.into_iter().map(|i| i.example).collect();
            write_jsonl(need_out(out, cfg)?, &examples)
        }
        Command::InitModel { kind, out, gain } => {
            let w: Weights<T> = match kind {
                ModelKind::Random => Weights::init_random(&cfg.model, cfg.seed)?,
                ModelKind::MatchedFilter => build_matched_filter(&cfg.model, *gain)?,
            };
            w.save(need_out(out, cfg)?)?;
            println!("{}", w.fingerprint()?);
            Ok(())
        }
        Command::TrainHead {
            weights,
            data,
            out,
            curve,
        } => {
            let w = load_weights::<T>(weights, cfg)?;
            let dataset = read_jsonl(need(data, &cfg.io.dataset, "data")?)?;
            let out = need_out(out, cfg)?;
            let init = HeadSet::random(&w.config, cfg.training.d_r, cfg.seed)?;
            let (trained, losses) = train(init, &w, &dataset, &cfg.training, cfg.seed)?;
            trained.save(&out)?;
            if let Some(c) = curve {
                let rows: Vec<String> = losses
                    .iter()
                    .enumerate()
                    .map(|(i, l)| format!("{},{l:e}", i + 1))
                    .collect();
                write_csv(c, &echo, "step,loss", &rows)?;
            }
            if let Some(last) = losses.last() {
                println!("steps {} final_loss {last:e}", losses.len());
            }
            Ok(())
        }
        Command::Infer {
            weights,
            heads,
            prompt,
            query,
            max_new,
            out,
        } => {
            let w = load_weights::<T>(weights, cfg)?;
            let ev = &cfg.eviction;
            let hs = load_heads::<T>(heads, cfg, ev.policy.needs_heads())?;
            let tokens = read_tokens(&need(prompt, &cfg.io.prompt, "prompt")?)?;
            let mut pf = if ev.policy == PolicyKind::LocretQ {
                let q = query
                    .as_ref()
                    .ok_or_else(|| Error::config("the locret_q policy needs --query"))?;
                locret_q_prefill(&w, hs.as_ref(), &read_tokens(q)?, &tokens, ev)?
            } else {
                chunked_prefill_with_eviction(&w, hs.as_ref(), &tokens, ev)?
            };
            let prefill_cache = pf.pool.max_len();
            let steps = pf.steps;
            let decoded = decode(&w, &mut pf, *max_new)?;
            println!("{}", serde_json::to_string(&decoded)?);
            if let Some(o) = out {
                let metrics = json!({
                    "policy": ev.policy.name(),
                    "prompt_len": tokens.len(),
                    "b": ev.b,
                    "chunk_size": ev.chunk_size,
                    "compression": compression_ratio(tokens.len(), ev.b)?,
                    "chunk_steps": steps,
                    "max_cache_after_prefill": prefill_cache,
                    "max_cache_after_decode": pf.pool.max_len(),
                    "decoded": decoded,
                });
                write_json(o, &echo, &metrics)?;
            }
            Ok(())
        }
        Command::Consistency {
            weights,
            heads,
            prompt,
            scorer,
            grid,
            top_frac,
            window,
            out,
        } => {
            let w = load_weights::<T>(weights, cfg)?;
            let hs = load_heads::<T>(heads, cfg, *scorer == ScorerKind::Locret)?;
            let tokens = prompt_or_task(prompt, cfg, &w)?;
            let out = need_out(out, cfg)?;
            let grid = if grid.is_empty() {
                let n = tokens.len();
                (1..=8).map(|i| (n * i / 8).max(1)).collect()
            } else {
                grid.clone()
            };
            let report = match scorer {
                ScorerKind::Locret => {
                    let hs = hs.as_ref().expect("checked above");
                    consistency_curve("locret", |t| locret_scores(&w, hs, t), &tokens, &grid, *top_frac)?
                }
                ScorerKind::Sirllm => {
                    consistency_curve("sirllm", |t| sirllm_scores(&w, t), &tokens, &grid, *top_frac)?
                }
                ScorerKind::H2o => {
                    consistency_curve("h2o", |t| h2o_scores(&w, t), &tokens, &grid, *top_frac)?
                }
                ScorerKind::Snapkv => consistency_curve(
                    "snapkv",
                    |t| snapkv_scores(&w, t, *window),
                    &tokens,
                    &grid,
                    *top_frac,
                )?,
            };
            let echo = with_extra(echo, json!({ "prompt_len": tokens.len(), "corpus": "synthetic passkey haystack" }));
            write_csv(out, &echo, CONSISTENCY_CSV_HEADER, &report.csv_rows())
        }
        Command::AblateStabilizers {
            weights,
            heads,
            grid,
            tasks,
            out,
            summary,
        } => {
            let w = load_weights::<T>(weights, cfg)?;
            let hs = load_heads::<T>(heads, cfg, true)?.expect("required");
            let out = need_out(out, cfg)?;
            let layout = NeedleLayout::for_vocab(w.config.vocab)?;
            let set = gen_passkey_set(&cfg.task, &layout, *tasks)?;
            let rep = stabilizer_ablation_jobs(&w, &hs, &set, &cfg.eviction, grid, cli.jobs)?;
            write_csv(out, &echo, ABLATION_CSV_HEADER, &rep.csv_rows())?;
            if let Some(s) = summary {
                write_csv(s, &echo, ABLATION_SUMMARY_HEADER, &rep.summary_rows())?;
            }
            Ok(())
        }
        Command::Trace {
            weights,
            heads,
            prompt,
            out,
            matrix,
            layer,
            kv_head,
        } => {
            let w = load_weights::<T>(weights, cfg)?;
            let ev = &cfg.eviction;
            if ev.policy == PolicyKind::LocretQ {
                return Err(Error::config("trace does not support the locret_q policy"));
            }
            let hs = load_heads::<T>(heads, cfg, ev.policy.needs_heads())?;
            let tokens = prompt_or_task(prompt, cfg, &w)?;
            let out = need_out(out, cfg)?;
            let pf = chunked_prefill_traced(&w, hs.as_ref(), &tokens, ev)?;
            let mut buf = Vec::new();
            write_trace_csv(&mut buf, &pf.trace)?;
            fs::write(out, buf)?;
            if let Some(m) = matrix {
                let tm = trace_retained(&pf.trace, *layer, *kv_head)?;
                write_csv(m, &echo, &tm.csv_header(), &tm.csv_rows())?;
            }
            Ok(())
        }
        Command::PasskeyEval {
            weights,
            heads,
            budgets,
            trials,
            out,
            csv,
        } => {
            let w = load_weights::<T>(weights, cfg)?;
            let ev = &cfg.eviction;
            let hs = load_heads::<T>(heads, cfg, ev.policy.needs_heads())?;
            let budgets = if budgets.is_empty() { vec![ev.b] } else { budgets.clone() };
            let out = need_out(out, cfg)?;
            let rows = passkey_eval_jobs(&w, hs.as_ref(), ev, &budgets, &cfg.task, *trials, cli.jobs)?;
            write_json(out, &echo, &rows)?;
            if let Some(c) = csv {
                let lines: Vec<String> = rows.iter().map(|r| r.csv()).collect();
                write_csv(c, &echo, PASSKEY_CSV_HEADER, &lines)?;
            }
            for r in &rows {
                println!("{}", r.csv());
            }
            Ok(())
        }
        Command::TheoryCheck {
            trials,
            max_n,
            max_b,
            out,
        } => {
            let rep = theorem_check(*trials, *max_n, *max_b, cfg.seed)?;
            let text = serde_json::to_string_pretty(&rep)? + "\n";
            if let Some(o) = out {
                fs::write(o, &text)?;
            }
            print!("{text}");
            Ok(())
        }
    }
}

fn with_extra(mut echo: Value, extra: Value) -> Value {
    if let (Some(e), Value::Object(x)) = (echo.as_object_mut(), extra) {
        e.extend(x);
    }
    echo
}
