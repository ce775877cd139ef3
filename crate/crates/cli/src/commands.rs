use std::fmt;
use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use anyhow::{Context, Result};
use serde_json::json;
use turducken_core::checkers::checker_from_spec;
use turducken_core::corpus::{self, make_mtl_corpus, split_stats, stats, synthetic_corpus};
use turducken_core::decode::{decode, Strategy};
use turducken_core::metrics::{self, CodeBleuWeights, EvalPair, MetricName, Style};
use turducken_core::model::{encode_pairs, train_toy, AdamWConfig, Checkpoint, ModelConfig};
use turducken_core::sat::{parse_rendered, render, sat_decode, sat_encode, strip_tags, SatSequence};
use turducken_core::{
    BridgeScorer, Checker, Grammar, PromptKind, PromptTemplate, SyntaxNode, TagLength, TagPolicy, TaskId, ToyScorer,
};

use crate::config::{FileConfig, TrainFile};
use crate::{
    CheckArgs, Cli, Command, ConvertArgs, EvaluateArgs, GenerateArgs, SatCommand, SatDecodeArgs, SatEncodeArgs,
    StatsArgs, TrainArgs,
};

/// Invalid flag values; reported with exit code 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn parse_flag<T>(name: &str, value: &str) -> Result<T>
where
    T: FromStr,
    T::Err: fmt::Display,
{
    value.parse().map_err(|e| usage(format!("--{name}: {e}")))
}

fn opt_flag<T>(name: &str, value: Option<&str>) -> Result<Option<T>>
where
    T: FromStr,
    T::Err: fmt::Display,
{
    value.map(|v| parse_flag(name, v)).transpose()
}

fn read_input(path: Option<&Path>) -> Result<String> {
    match path {
        Some(p) if p != Path::new("-") => fs::read_to_string(p).with_context(|| format!("reading {}", p.display())),
        _ => {
            let mut s = String::new();
            io::stdin().read_to_string(&mut s)?;
            Ok(s)
        }
    }
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<()> {
    let mut out = io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    Ok(())
}

fn grammar_of(flag: Option<&str>, file: &FileConfig) -> Result<Grammar> {
    Ok(opt_flag("grammar", flag.or(file.grammar.as_deref()))?.unwrap_or(Grammar::Python))
}

fn build_checker(spec: Option<&str>, timeout: Option<u64>, file: &FileConfig) -> Result<Option<Box<dyn Checker>>> {
    let spec = spec.or(file.checker.as_deref());
    let timeout = timeout.or(file.checker_timeout_ms);
    spec.map(|s| checker_from_spec(s, timeout).map_err(|e| usage(format!("--checker: {e}"))))
        .transpose()
}

pub fn run(cli: Cli) -> Result<()> {
    let file = FileConfig::load(cli.config_file.as_deref()).map_err(|e| usage(format!("{e:#}")))?;
    match cli.command {
        Command::Sat(SatCommand::Encode(a)) => sat_encode_cmd(a, &file),
        Command::Sat(SatCommand::Decode(a)) => sat_decode_cmd(a, &file),
        Command::Generate(a) => generate(a, &file),
        Command::Evaluate(a) => evaluate(a, &file),
        Command::TrainToy(a) => train(a, &file),
        Command::Stats(a) => stats_cmd(a),
        Command::Check(a) => check(a, &file),
        Command::Convert(a) => convert(a),
    }
}

fn sat_encode_cmd(a: SatEncodeArgs, file: &FileConfig) -> Result<()> {
    let grammar = grammar_of(a.grammar.as_deref(), file)?;
    let tag_length: TagLength = parse_flag("tag-length", &a.tag_length)?;
    let text = read_input(a.input.as_deref())?;
    let tree = if a.tree_json {
        SyntaxNode::from_json_str(&text)?
    } else {
        let tree = grammar.parse(&text)?;
        if tree.has_error() {
            log::warn!("input contains syntax errors");
        }
        tree
    };
    let seq = sat_encode(&tree, &TagPolicy::for_grammar(grammar).with_tag_length(tag_length));
    if a.json {
        print_json(&seq)
    } else {
        println!("{}", render(&seq));
        Ok(())
    }
}

fn sat_decode_cmd(a: SatDecodeArgs, file: &FileConfig) -> Result<()> {
    let text = read_input(a.input.as_deref())?;
    let tokens = if text.trim_start().starts_with('{') {
        let seq: SatSequence = serde_json::from_str(&text).context("parsing sequence JSON")?;
        sat_decode(&seq)?
    } else {
        strip_tags(&parse_rendered(&text))?
    };
    match a.grammar.as_deref().or(file.grammar.as_deref()) {
        Some(g) => println!("{}", parse_flag::<Grammar>("grammar", g)?.detokenize(&tokens)),
        None => println!("{}", tokens.join(" ")),
    }
    Ok(())
}

fn generate(a: GenerateArgs, file: &FileConfig) -> Result<()> {
    let mut opts = file.decode.clone().unwrap_or_default();
    if let Some(s) = opt_flag::<Strategy>("strategy", a.strategy.as_deref())? {
        opts.strategy = s;
    }
    if let Some(k) = a.beam_k {
        opts.beam_k = k;
    }
    if let Some(m) = a.max_len {
        opts.max_len = m;
    }
    if let Some(s) = a.seed {
        opts.seed = s;
    }
    if let Some(t) = a.temperature {
        opts.temperature = t;
    }
    if a.sequential_checks {
        opts.concurrent_checks = false;
    }
    if opts.beam_k == 0 || opts.max_len == 0 || opts.temperature.is_nan() || opts.temperature <= 0.0 {
        return Err(usage("--beam-k and --max-len must be positive, --temperature > 0"));
    }
    let task: TaskId = parse_flag("task", &a.task)?;
    let grammar = grammar_of(a.grammar.as_deref(), file)?;
    let prompt = opt_flag::<PromptKind>("prompt", a.prompt.as_deref().or(file.prompt.as_deref()))?;
    let checker = build_checker(a.checker.as_deref(), a.checker_timeout_ms, file)?;
    if opts.strategy == Strategy::SfBeam && checker.is_none() {
        return Err(usage("--strategy sf_beam needs --checker"));
    }
    let checker_ref = checker.as_deref();
    let output = if let Some(path) = a.scorer.strip_prefix("toy:") {
        let ckpt = Checkpoint::load(Path::new(path)).with_context(|| format!("loading {path}"))?;
        let template = match prompt {
            Some(kind) => PromptTemplate::with_soft_tokens(kind, ckpt.prompt.n_soft)?,
            None => ckpt.prompt,
        };
        let model = ckpt.model()?;
        let scorer = ToyScorer::new(Arc::new(model), Arc::new(ckpt.vocab), &template, &a.nl)?.with_grammar(grammar);
        decode(&scorer, task, &opts, checker_ref)?
    } else if a.scorer == "bridge" || a.scorer.starts_with("bridge:") {
        let addr = match a.scorer.strip_prefix("bridge:") {
            Some(addr) => addr.to_string(),
            None => std::env::var("TURDUCKEN_BRIDGE_ADDR")
                .ok()
                .or_else(|| file.bridge_addr.clone())
                .ok_or_else(|| usage("no bridge address: use bridge:<addr> or TURDUCKEN_BRIDGE_ADDR"))?,
        };
        let template = PromptTemplate::new(prompt.unwrap_or(PromptKind::Standard));
        let scorer = BridgeScorer::open(&addr)?.with_prompt(&template, &a.nl);
        log::info!("bridge model `{}`", scorer.handshake().model_name);
        let out = decode(&scorer, task, &opts, checker_ref)?;
        scorer.close()?;
        out
    } else {
        return Err(usage(format!(
            "--scorer must be toy:<checkpoint> or bridge:<addr>, got `{}`",
            a.scorer
        )));
    };
    print_json(&output)
}

fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).with_context(|| format!("{}:{}", path.display(), i + 1)))
        .collect()
}

fn evaluate(a: EvaluateArgs, file: &FileConfig) -> Result<()> {
    let mut cfg = file.evaluate.clone().unwrap_or_default();
    if let Some(g) = a.grammar.as_deref().or(file.grammar.as_deref()) {
        cfg.grammar = parse_flag("grammar", g)?;
    }
    if let Some(s) = opt_flag::<Style>("style", a.style.as_deref())? {
        cfg.style = s;
    }
    if let Some(ms) = &a.metrics {
        cfg.metrics = ms
            .iter()
            .map(|m| parse_flag::<MetricName>("metrics", m))
            .collect::<Result<_>>()?;
    }
    if let Some(w) = &a.weights {
        let [b, wb, sm, df] = w[..] else {
            return Err(usage("--weights takes four comma-separated values"));
        };
        cfg.code_bleu_weights = CodeBleuWeights::new(b, wb, sm, df).map_err(|e| usage(format!("--weights: {e}")))?;
    }
    if let Some(k) = a.keyword_weight {
        cfg.keyword_weight = k;
    }
    if let Some(k) = a.trivial_k {
        cfg.trivial_k = k;
    }
    let checker = build_checker(a.checker.as_deref(), a.checker_timeout_ms, file)?;
    if cfg.metrics.contains(&MetricName::CodeExecutable) && checker.is_none() {
        if a.metrics.is_some() {
            return Err(usage("code_executable needs --checker"));
        }
        cfg.metrics.retain(|m| *m != MetricName::CodeExecutable);
    }
    let pairs: Vec<EvalPair> = read_jsonl(&a.pairs)?;
    let background = match &a.background {
        Some(p) => {
            let sources: Vec<String> = read_jsonl(p)?;
            Some(
                sources
                    .iter()
                    .map(|s| metrics::code_tokens(s, cfg.grammar))
                    .collect::<turducken_core::Result<Vec<_>>>()?,
            )
        }
        None => None,
    };
    let report = metrics::evaluate(&pairs, &cfg, background.as_deref(), checker.as_deref())?;
    for (m, v) in &report.corpus {
        eprintln!("{:<20} {:>8.4}", m.as_str(), v);
    }
    if report.degenerate_crystal_pairs > 0 {
        eprintln!(
            "{} pair(s) degenerate under crystal_bleu",
            report.degenerate_crystal_pairs
        );
    }
    match &a.report {
        Some(path) => {
            fs::write(path, serde_json::to_vec_pretty(&report)?)
                .with_context(|| format!("writing {}", path.display()))?;
            Ok(())
        }
        None => print_json(&report),
    }
}

fn train(a: TrainArgs, file: &FileConfig) -> Result<()> {
    let tf: TrainFile = match &a.config {
        Some(p) => serde_json::from_str(&fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?)
            .map_err(|e| usage(format!("--config {}: {e}", p.display())))?,
        None => TrainFile::default(),
    };
    let mut model_cfg = tf.model.or_else(|| file.model.clone()).unwrap_or(ModelConfig {
        d_model: 32,
        ..Default::default()
    });
    let mut train_cfg = tf.train.or_else(|| file.train.clone()).unwrap_or_default();
    if let Some(s) = a.steps {
        train_cfg.steps = s;
    }
    if let Some(s) = a.seed {
        train_cfg.seed = s;
    }
    if let Some(b) = a.batch_size {
        train_cfg.batch_size = b;
    }
    if let Some(lr) = a.lr {
        train_cfg.optimizer = AdamWConfig {
            lr,
            ..train_cfg.optimizer
        };
    }
    let kind = opt_flag::<PromptKind>("prompt", a.prompt.as_deref().or(file.prompt.as_deref()))?
        .unwrap_or(PromptKind::Standard);
    let template = PromptTemplate::new(kind);
    model_cfg.n_soft = template.n_soft;
    let tag_length: TagLength = parse_flag("tag-length", &a.tag_length)?;
    let samples = match &a.corpus {
        Some(dir) => corpus::load_split(&corpus::split_dir(dir))?.train,
        None => synthetic_corpus(a.synthetic, train_cfg.seed),
    };
    let grammar = samples.first().map(|s| s.language).unwrap_or(Grammar::Python);
    let policy = TagPolicy::for_grammar(grammar).with_tag_length(tag_length);
    let mtl = make_mtl_corpus(&samples, &policy, &template)?;
    if !mtl.skipped.is_empty() {
        eprintln!("skipped {} unparseable sample(s)", mtl.skipped.len());
    }
    let data = encode_pairs(&mtl.pairs, model_cfg.max_input_len, model_cfg.max_output_len)?;
    let every = a.log_every.max(1);
    let (model, report) = train_toy(&data, model_cfg, train_cfg.clone(), |s, l| {
        if s % every == 0 {
            eprintln!(
                "step {s:>5}  loss {:.4}  (primary {:.4}, syntax {:.4})",
                l.total, l.primary, l.auxiliary
            );
        }
    })?;
    if let Some(out) = &a.out {
        Checkpoint::new(&model, data.vocab.clone(), template, policy)
            .save(out)
            .with_context(|| format!("writing {}", out.display()))?;
    }
    print_json(&json!({
        "samples": mtl.pairs.len(),
        "skipped": mtl.skipped,
        "vocab_size": data.vocab.len(),
        "parameters": report.parameters,
        "steps": train_cfg.steps,
        "seed": train_cfg.seed,
        "initial_loss": report.initial,
        "final_loss": report.final_loss,
        "loss_reduction": report.loss_reduction(),
        "initial_gate_deviation": report.initial_gate_deviation,
        "gate_deviation": report.gate_deviation,
        "loss_curve": report.history.iter().map(|l| l.total).collect::<Vec<_>>(),
    }))
}

fn stats_cmd(a: StatsArgs) -> Result<()> {
    if a.path.is_dir() {
        let split = corpus::load_split(&corpus::split_dir(&a.path))?;
        let st = split_stats(&split);
        for (name, s) in [("train", &st.train), ("valid", &st.valid), ("test", &st.test)] {
            if let Some(s) = s {
                eprintln!(
                    "{name:<6} {:>6} samples  nl {:>7.2}  code {:>7.2}",
                    s.count, s.mean_nl_tokens, s.mean_code_tokens
                );
            }
        }
        print_json(&st)
    } else {
        print_json(&stats(&corpus::load_jsonl(&a.path)?)?)
    }
}

fn check(a: CheckArgs, file: &FileConfig) -> Result<()> {
    let checker = build_checker(a.checker.as_deref(), a.checker_timeout_ms, file)?
        .ok_or_else(|| usage("--checker is required"))?;
    let source = read_input(a.input.as_deref())?;
    print_json(&checker.check(&source)?)
}

fn convert(a: ConvertArgs) -> Result<()> {
    let language: Grammar = parse_flag("language", &a.language)?;
    let style: Style = parse_flag("style", &a.style)?;
    let text = read_input(Some(&a.input))?;
    let samples = corpus::convert_records(&text, language, style, &a.prefix, &a.input)?;
    match &a.out {
        Some(p) => corpus::write_jsonl(p, &samples)?,
        None => {
            let mut out = io::stdout().lock();
            for s in &samples {
                writeln!(out, "{}", serde_json::to_string(s)?)?;
            }
        }
    }
    eprintln!("converted {} record(s)", samples.len());
    Ok(())
}
