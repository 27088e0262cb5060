//! Implementations of the six subcommands. Each takes its parsed arguments,
//! produces structured text on stdout, and returns an error for `main` to
//! print and turn into a nonzero exit.

use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};

use trasa_core::checkpoint::{load_checkpoint, peek_checkpoint, save_checkpoint};
use trasa_core::data::files::{
    read_instances, read_vocab, write_event_log, write_instances, write_stats, write_vocab,
};
use trasa_core::data::{
    ingest, long_range, markov, process, Instance, LongRangeParams, MarkovParams, Vocab,
};
use trasa_core::eval::evaluate;
use trasa_core::gradcheck::{full_suite, RELATIVE_TOLERANCE};
use trasa_core::model::{predict_scores, ModelConfig};
use trasa_core::train::{train, write_train_log, TrainConfig};
use trasa_core::{Dtype, Scalar};

use crate::config::AppConfig;
use crate::{
    EvalArgs, GradcheckArgs, PreprocessArgs, RecommendArgs, SynthesizeArgs, TrainArgs,
};

fn override_field<T: Clone>(slot: &mut T, value: &Option<T>) {
    if let Some(v) = value {
        *slot = v.clone();
    }
}

pub fn preprocess(args: &PreprocessArgs) -> Result<()> {
    let mut cfg = AppConfig::load(args.config.as_deref())?;
    override_field(&mut cfg.min_item_support, &args.min_support);
    override_field(&mut cfg.test_fraction, &args.test_fraction);
    override_field(&mut cfg.valid_fraction, &args.valid_fraction);
    override_field(&mut cfg.augment, &args.augment);
    override_field(&mut cfg.seed, &args.seed);
    override_field(&mut cfg.delimiter, &args.delimiter);
    override_field(&mut cfg.header, &args.header);
    override_field(&mut cfg.session_col, &args.session_col);
    override_field(&mut cfg.item_col, &args.item_col);
    override_field(&mut cfg.time_col, &args.time_col);

    let format = cfg.ingest_format()?;
    let report = ingest(&args.input, &format)
        .with_context(|| format!("ingesting {}", args.input.display()))?;
    println!(
        "rows={} malformed={} raw_sessions={}",
        report.rows,
        report.malformed,
        report.sessions.len()
    );

    let dataset = process(report.sessions, &cfg.pipeline_config())?;
    fs::create_dir_all(&args.out_dir)
        .with_context(|| format!("creating {}", args.out_dir.display()))?;
    write_instances(&args.out_dir.join("train.instances"), &dataset.train)?;
    write_instances(&args.out_dir.join("valid.instances"), &dataset.valid)?;
    write_instances(&args.out_dir.join("test.instances"), &dataset.test)?;
    write_vocab(&args.out_dir.join("vocab.txt"), &dataset.vocab)?;
    let stats_path = args.out_dir.join("stats.txt");
    write_stats(&stats_path, &dataset)?;
    print!("{}", fs::read_to_string(&stats_path)?);
    println!("out_dir={}", args.out_dir.display());
    Ok(())
}

/// Load one split's instances and refuse indices outside the vocabulary.
fn load_split(dir: &Path, split: &str, n_items: usize) -> Result<Vec<Instance>> {
    let path = dir.join(format!("{split}.instances"));
    let instances =
        read_instances(&path).with_context(|| format!("reading {}", path.display()))?;
    for inst in &instances {
        if inst.label >= n_items || inst.prefix.iter().any(|&i| i >= n_items) {
            bail!(
                "{}: instance refers to item index ≥ vocabulary size {n_items}",
                path.display()
            );
        }
    }
    Ok(instances)
}

fn run_train<S: Scalar>(
    args: &TrainArgs,
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    train_set: &[Instance],
    valid_set: &[Instance],
) -> Result<()> {
    let outcome = train::<S>(model_cfg, train_cfg, train_set, valid_set)?;
    for rec in &outcome.log {
        println!("{rec}");
    }
    println!(
        "best_epoch={} best_val_p20={} stopped_early={} epochs_run={}",
        outcome.best_epoch, outcome.best_val_p20, outcome.stopped_early, outcome.epochs_run
    );
    save_checkpoint(&args.checkpoint, &outcome.store, model_cfg)
        .with_context(|| format!("writing {}", args.checkpoint.display()))?;
    println!("checkpoint={}", args.checkpoint.display());
    if let Some(log_path) = &args.log {
        write_train_log(log_path, &outcome.log)
            .with_context(|| format!("writing {}", log_path.display()))?;
        println!("log={}", log_path.display());
    }
    Ok(())
}

pub fn train_cmd(args: &TrainArgs) -> Result<()> {
    let mut cfg = AppConfig::load(args.config.as_deref())?;
    override_field(&mut cfg.dtype, &args.dtype);
    override_field(&mut cfg.d_model, &args.d_model);
    override_field(&mut cfg.n_heads, &args.n_heads);
    override_field(&mut cfg.n_layers, &args.n_layers);
    override_field(&mut cfg.ffn_inner, &args.ffn_inner);
    override_field(&mut cfg.dropout, &args.dropout);
    override_field(&mut cfg.max_positions, &args.max_positions);
    override_field(&mut cfg.path_cap, &args.path_cap);
    override_field(&mut cfg.ablation, &args.ablation);
    override_field(&mut cfg.readout, &args.readout);
    override_field(&mut cfg.loss_mode, &args.loss_mode);
    override_field(&mut cfg.learning_rate, &args.learning_rate);
    override_field(&mut cfg.lr_decay_factor, &args.lr_decay_factor);
    override_field(&mut cfg.lr_decay_every, &args.lr_decay_every);
    override_field(&mut cfg.weight_decay, &args.weight_decay);
    override_field(&mut cfg.batch_size, &args.batch_size);
    override_field(&mut cfg.max_epochs, &args.max_epochs);
    override_field(&mut cfg.patience, &args.patience);
    override_field(&mut cfg.seed, &args.seed);
    if args.target_train_p1.is_some() {
        cfg.target_train_p1 = args.target_train_p1;
    }

    let vocab_path = args.data_dir.join("vocab.txt");
    let vocab =
        read_vocab(&vocab_path).with_context(|| format!("reading {}", vocab_path.display()))?;
    if vocab.is_empty() {
        bail!("{}: the vocabulary is empty", vocab_path.display());
    }
    let model_cfg = cfg.model_config(vocab.len())?;
    let train_cfg = cfg.train_config()?;
    let train_set = load_split(&args.data_dir, "train", vocab.len())?;
    let valid_set = load_split(&args.data_dir, "valid", vocab.len())?;
    println!(
        "n_items={} train_instances={} valid_instances={} dtype={}",
        vocab.len(),
        train_set.len(),
        valid_set.len(),
        cfg.dtype
    );
    match cfg.parse_dtype()? {
        Dtype::F32 => run_train::<f32>(args, &model_cfg, &train_cfg, &train_set, &valid_set),
        Dtype::F64 => run_train::<f64>(args, &model_cfg, &train_cfg, &train_set, &valid_set),
    }
}

fn run_eval<S: Scalar>(args: &EvalArgs, ks: &[usize]) -> Result<()> {
    let (store, cfg) = load_checkpoint::<S>(&args.checkpoint)
        .with_context(|| format!("loading {}", args.checkpoint.display()))?;
    let instances = load_split(&args.data_dir, &args.split, cfg.n_items)?;
    let report = evaluate(&store, &cfg, &instances, ks)?;
    println!("{report}");
    Ok(())
}

pub fn eval_cmd(args: &EvalArgs) -> Result<()> {
    let ks = parse_ks(&args.ks)?;
    let (dtype, _) = peek_checkpoint(&args.checkpoint)
        .with_context(|| format!("inspecting {}", args.checkpoint.display()))?;
    match dtype {
        Dtype::F32 => run_eval::<f32>(args, &ks),
        Dtype::F64 => run_eval::<f64>(args, &ks),
    }
}

fn parse_ks(s: &str) -> Result<Vec<usize>> {
    let ks = s
        .split(',')
        .map(|p| p.trim().parse::<usize>().map_err(|_| anyhow::anyhow!("bad cutoff {p:?}")))
        .collect::<Result<Vec<_>>>()?;
    if ks.is_empty() || ks.contains(&0) {
        bail!("cutoff list must be non-empty positive integers, got {s:?}");
    }
    Ok(ks)
}

fn run_recommend<S: Scalar>(args: &RecommendArgs, vocab: &Vocab) -> Result<()> {
    let (store, cfg) = load_checkpoint::<S>(&args.checkpoint)
        .with_context(|| format!("loading {}", args.checkpoint.display()))?;
    if cfg.n_items != vocab.len() {
        bail!(
            "checkpoint was trained on {} items but the vocabulary lists {}",
            cfg.n_items,
            vocab.len()
        );
    }
    let mut session = Vec::new();
    for raw in args.session.split(',').map(str::trim) {
        match vocab.index_of(raw) {
            Some(idx) => session.push(idx),
            None => bail!("item {raw:?} is not in the vocabulary"),
        }
    }
    if session.is_empty() {
        bail!("the session is empty");
    }
    let scores = predict_scores::<S>(&store, &cfg, &session)?;
    let scores: Vec<f64> = scores.iter().map(|&v| v.to_f64()).collect();
    let mut order: Vec<usize> = (0..scores.len()).collect();
    // Descending score; ties broken by ascending item index.
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    for &idx in order.iter().take(args.k) {
        let id = vocab.raw(idx).expect("index from the score vector");
        println!("{id} {}", scores[idx]);
    }
    Ok(())
}

pub fn recommend(args: &RecommendArgs) -> Result<()> {
    if args.k == 0 {
        bail!("k must be at least 1");
    }
    let vocab =
        read_vocab(&args.vocab).with_context(|| format!("reading {}", args.vocab.display()))?;
    let (dtype, _) = peek_checkpoint(&args.checkpoint)
        .with_context(|| format!("inspecting {}", args.checkpoint.display()))?;
    match dtype {
        Dtype::F32 => run_recommend::<f32>(args, &vocab),
        Dtype::F64 => run_recommend::<f64>(args, &vocab),
    }
}

pub fn gradcheck_cmd(args: &GradcheckArgs) -> Result<()> {
    let reports = full_suite(args.step)?;
    let mut worst: f64 = 0.0;
    let mut all_pass = true;
    for report in &reports {
        println!("{report}");
        worst = worst.max(report.max_rel_err);
        all_pass &= report.passed();
    }
    println!("overall max_rel_err={worst} tolerance={RELATIVE_TOLERANCE} pass={all_pass}");
    if !all_pass {
        bail!("gradient check failed: max relative error {worst} exceeds {RELATIVE_TOLERANCE}");
    }
    Ok(())
}

pub fn synthesize(args: &SynthesizeArgs) -> Result<()> {
    let sessions: Vec<Vec<usize>> = match args.kind.as_str() {
        "markov" => {
            let defaults = MarkovParams::default();
            let p = MarkovParams {
                n_items: args.items.unwrap_or(defaults.n_items),
                sessions: args.sessions.unwrap_or(defaults.sessions),
                min_len: args.min_len.unwrap_or(defaults.min_len),
                max_len: args.max_len.unwrap_or(defaults.max_len),
                concentration: args.concentration.unwrap_or(defaults.concentration),
                seed: args.seed.unwrap_or(defaults.seed),
            };
            markov(&p)?.sessions
        }
        "long-range" => {
            let defaults = LongRangeParams::default();
            let p = LongRangeParams {
                n_items: args.items.unwrap_or(defaults.n_items),
                sessions: args.sessions.unwrap_or(defaults.sessions),
                length: args.length.unwrap_or(defaults.length),
                gap: args.gap.unwrap_or(defaults.gap),
                seed: args.seed.unwrap_or(defaults.seed),
            };
            long_range(&p)?
        }
        other => bail!("unknown corpus kind '{other}'; expected markov or long-range"),
    };
    if let Some(dir) = args.out.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        }
    }
    write_event_log(&args.out, &sessions)?;
    let clicks: usize = sessions.iter().map(Vec::len).sum();
    println!("kind={} sessions={} clicks={} out={}", args.kind, sessions.len(), clicks, args.out.display());
    println!("note: the event log is tab-separated; preprocess it with --delimiter tab");
    Ok(())
}

/// Shared by `main` for uniform error reporting.
pub fn exit_with(result: Result<()>) -> ! {
    match result {
        Ok(()) => std::process::exit(0),
        Err(e) => {
            eprintln!("error: {e:#}");
            std::process::exit(1);
        }
    }
}
