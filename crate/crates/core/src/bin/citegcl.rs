use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{value_parser, Arg, ArgAction, ArgMatches, Command};
use log::{error, info};

use citegcl::corpus::{load_corpus, Corpus, SplitRole};
use citegcl::harness::{
    build_selection_cache, evaluate, exit_code, load_checkpoint, split_for, sweep_rho, write_synthetic_corpus, TrainConfig,
    Trainer, EXIT_DEGENERATE, EXIT_FAILURE, MAX_SKIP_FRACTION,
};
use citegcl::losses::theory::{
    random_bipartite_problem, random_citation_problem, verify_factorization, FactorizationProblem, VerifyOptions,
};
use citegcl::selection::SelectionCache;
use citegcl::{Error, Result};

fn config_args() -> Vec<Arg> {
    let mut args = vec![
        Arg::new("config").long("config").value_name("PATH").help("`key = value` config file"),
        Arg::new("set")
            .long("set")
            .value_name("KEY=VALUE")
            .action(ArgAction::Append)
            .help("override one config key"),
    ];
    for (key, _) in TrainConfig::desk().entries() {
        let long: &'static str = Box::leak(key.replace('_', "-").into_boxed_str());
        args.push(Arg::new(key).long(long).value_name("VALUE").hide_short_help(key != "mode"));
    }
    args
}

fn corpus_arg() -> Arg {
    Arg::new("corpus")
        .long("corpus")
        .value_name("PATH")
        .required(true)
        .value_parser(value_parser!(PathBuf))
        .help("corpus.jsonl")
}

fn out_arg(required: bool) -> Arg {
    Arg::new("out").long("out").value_name("DIR").required(required).value_parser(value_parser!(PathBuf))
}

fn selection_arg() -> Arg {
    Arg::new("selection")
        .long("selection")
        .value_name("PATH")
        .value_parser(value_parser!(PathBuf))
        .help("selection cache written by `select`; recomputed when absent")
}

fn cli() -> Command {
    Command::new("citegcl")
        .about("Citation-graph contrastive summarization of scientific papers")
        .subcommand_required(true)
        .subcommand(
            Command::new("build-dataset")
                .about("write a synthetic corpus (corpus.jsonl, edges.tsv)")
                .arg(out_arg(true))
                .arg(Arg::new("docs").long("docs").default_value("60").value_parser(value_parser!(usize)))
                .arg(Arg::new("vocab").long("vocab").default_value("400").value_parser(value_parser!(usize)))
                .arg(Arg::new("avg-edges").long("avg-edges").default_value("2.0").value_parser(value_parser!(f64)))
                .arg(Arg::new("seed").long("seed").default_value("0").value_parser(value_parser!(u64))),
        )
        .subcommand(
            Command::new("select")
                .about("run oracle selection for every (document, neighbour) pair of the split")
                .arg(corpus_arg())
                .arg(out_arg(true))
                .args(config_args()),
        )
        .subcommand(
            Command::new("train")
                .about("train with checkpoints and validation-based model selection")
                .arg(corpus_arg())
                .arg(out_arg(true))
                .arg(selection_arg())
                .arg(Arg::new("resume").long("resume").value_name("CHECKPOINT").value_parser(value_parser!(PathBuf)))
                .args(config_args()),
        )
        .subcommand(
            Command::new("evaluate")
                .about("generate summaries from a checkpoint and score them")
                .arg(corpus_arg())
                .arg(Arg::new("checkpoint").long("checkpoint").required(true).value_parser(value_parser!(PathBuf)))
                .arg(Arg::new("split").long("split").default_value("test").value_parser(value_parser!(SplitRole)))
                .arg(selection_arg())
                .arg(out_arg(false)),
        )
        .subcommand(
            Command::new("sweep-rho")
                .about("train and evaluate once per edge-pruning threshold")
                .arg(Arg::new("rho_values").value_name("RHO").required(true).num_args(1..).value_parser(value_parser!(f64)))
                .arg(corpus_arg())
                .arg(selection_arg())
                .arg(out_arg(false))
                .args(config_args()),
        )
        .subcommand(
            Command::new("verify-theory")
                .about("check negative-sampling optima against the closed-form factorization targets")
                .arg(Arg::new("problems").long("problems").default_value("10").value_parser(value_parser!(u64)))
                .arg(Arg::new("seed").long("seed").default_value("0").value_parser(value_parser!(u64)))
                .arg(out_arg(false)),
        )
}

fn config_from(m: &ArgMatches) -> Result<TrainConfig> {
    let mut config = match m.get_one::<String>("config") {
        Some(path) => TrainConfig::load(path)?,
        None => TrainConfig::desk(),
    };
    for (key, _) in TrainConfig::desk().entries() {
        if let Some(v) = m.get_one::<String>(key) {
            config.set(key, v)?;
        }
    }
    for kv in m.get_many::<String>("set").into_iter().flatten() {
        let (k, v) = kv.split_once('=').ok_or_else(|| Error::Config(format!("expected KEY=VALUE, got `{kv}`")))?;
        config.set(k.trim(), v.trim())?;
    }
    config.validate()?;
    Ok(config)
}

fn selection(m: &ArgMatches, corpus: &Corpus, split: &citegcl::corpus::CorpusSplit, config: &TrainConfig) -> Result<SelectionCache> {
    match m.get_one::<PathBuf>("selection") {
        Some(p) => SelectionCache::load(p),
        None => build_selection_cache(corpus, split, config.max_sentences),
    }
}

fn write_report(out: Option<&PathBuf>, stem: &str, text: &str, jsonl: &str) -> Result<()> {
    print!("{text}");
    if let Some(dir) = out {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join(format!("{stem}.txt")), text)?;
        std::fs::write(dir.join(format!("{stem}.jsonl")), jsonl)?;
    }
    Ok(())
}

fn run(matches: ArgMatches) -> Result<i32> {
    let (name, m) = matches.subcommand().expect("subcommand required");
    match name {
        "build-dataset" => {
            let out = m.get_one::<PathBuf>("out").unwrap();
            let corpus = write_synthetic_corpus(
                out,
                *m.get_one("docs").unwrap(),
                *m.get_one("vocab").unwrap(),
                *m.get_one("avg-edges").unwrap(),
                *m.get_one("seed").unwrap(),
            )?;
            println!("{} documents, {} citation edges -> {}", corpus.len(), corpus.graph().edge_count(), out.display());
        }
        "select" => {
            let config = config_from(m)?;
            let corpus = load_corpus(m.get_one::<PathBuf>("corpus").unwrap())?;
            let split = split_for(&corpus, &config)?;
            let cache = build_selection_cache(&corpus, &split, config.max_sentences)?;
            let out = m.get_one::<PathBuf>("out").unwrap();
            std::fs::create_dir_all(out)?;
            cache.save(out.join("selection.jsonl"))?;
            std::fs::write(out.join("config.kv"), config.to_kv())?;
            println!("{} selections -> {}", cache.len(), out.join("selection.jsonl").display());
        }
        "train" => {
            let config = config_from(m)?;
            let corpus = load_corpus(m.get_one::<PathBuf>("corpus").unwrap())?;
            let split = split_for(&corpus, &config)?;
            let cache = selection(m, &corpus, &split, &config)?;
            let out = m.get_one::<PathBuf>("out").unwrap();
            std::fs::create_dir_all(out)?;
            std::fs::write(out.join("config.kv"), config.to_kv())?;
            let mut trainer = Trainer::new(&corpus, &split, &cache, config)?;
            if trainer.skip_fraction() > MAX_SKIP_FRACTION {
                for (id, reason) in &trainer.skipped {
                    error!("skipped {id}: {reason}");
                }
                error!(
                    "{} of {} training documents skipped; refusing to train",
                    trainer.skipped.len(),
                    trainer.skipped.len() + trainer.instances().len()
                );
                return Ok(EXIT_DEGENERATE);
            }
            if let Some(ckpt) = m.get_one::<PathBuf>("resume") {
                trainer.resume(ckpt)?;
                info!("resumed at step {}", trainer.step);
            }
            let summary = trainer.run(Some(out))?;
            println!(
                "trained {} steps on {} instances ({} skipped); best checkpoint {}{}",
                summary.final_step,
                summary.instances,
                summary.skipped,
                summary.best_checkpoint.as_deref().map(Path::display).map(|d| d.to_string()).unwrap_or_else(|| "-".into()),
                summary.best_val_rouge1.map(|r| format!(" (val ROUGE-1 {r:.4})")).unwrap_or_default()
            );
        }
        "evaluate" => {
            let ckpt_path = m.get_one::<PathBuf>("checkpoint").unwrap();
            let config = load_checkpoint(ckpt_path)?.meta.train;
            let corpus = load_corpus(m.get_one::<PathBuf>("corpus").unwrap())?;
            let split = split_for(&corpus, &config)?;
            let cache = selection(m, &corpus, &split, &config)?;
            let report = evaluate(ckpt_path, &corpus, &split, &cache, *m.get_one::<SplitRole>("split").unwrap())?;
            write_report(m.get_one("out"), "eval", &report.to_text(), &report.to_jsonl())?;
        }
        "sweep-rho" => {
            let config = config_from(m)?;
            let corpus = load_corpus(m.get_one::<PathBuf>("corpus").unwrap())?;
            let split = split_for(&corpus, &config)?;
            let cache = selection(m, &corpus, &split, &config)?;
            let rhos: Vec<f64> = m.get_many::<f64>("rho_values").unwrap().copied().collect();
            let out = m.get_one::<PathBuf>("out");
            let sweep = sweep_rho(&corpus, &split, &cache, &config, &rhos, SplitRole::Test, out.map(|p| p.as_path()))?;
            write_report(out, "rho_sweep", &sweep.to_text(), &sweep.to_jsonl())?;
        }
        "verify-theory" => {
            let count: u64 = *m.get_one("problems").unwrap();
            let seed: u64 = *m.get_one("seed").unwrap();
            let (mut text, mut jsonl) = (String::new(), String::new());
            let mut failed = 0;
            for i in 0..count {
                let s = seed + i;
                for p in [
                    FactorizationProblem::Bipartite(random_bipartite_problem(2 + (s % 4) as usize, 6 + (s % 15) as usize, s)),
                    FactorizationProblem::Citation(random_citation_problem(3 + (s % 4) as usize, s)),
                ] {
                    let report = verify_factorization(&p, &VerifyOptions::for_problem(&p))?;
                    failed += usize::from(!report.passed);
                    text.push_str(&report.to_text());
                    jsonl.push_str(&report.to_jsonl());
                }
            }
            text.push_str(&format!("{} problems, {failed} failed\n", 2 * count));
            write_report(m.get_one("out"), "verification", &text, &jsonl)?;
            if failed > 0 {
                return Ok(EXIT_FAILURE);
            }
        }
        _ => unreachable!("clap rejects unknown subcommands"),
    }
    Ok(0)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(cli().get_matches()) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            error!("{e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
