//! `vql`: corpus generation, training and latent-space experiments.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use vqlatent::checkpoint;
use vqlatent::config::RunConfig;
use vqlatent::corpus::{
    all_words, corpus_from_str, corpus_to_string, generate_math, parse_sentence, shark_premises, training_corpus,
    AnnotatedSentence, Split,
};
use vqlatent::experiments::{
    exact_match_rate, inference_runs, interpolation_runs, reconstruction, sample_pairs, smoothness_summary,
    tree_experiment, RegionSpec,
};
use vqlatent::fsutil::write_atomic;
use vqlatent::geometry::{disentanglement_stats, latent_arithmetic_add, traverse_position, SubstitutionOp};
use vqlatent::train::{initialise, Trainer, LOSS_LOG_HEADER};
use vqlatent::{VqAutoencoder32, VqlError, Vocabulary};

#[derive(Parser)]
#[command(name = "vql", version, about = "Vector-quantised sequence autoencoder toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunFlags {
    /// JSON run configuration; VQL_* variables and flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args)]
struct ModelFlags {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Output directory.
    #[arg(long, default_value = "run")]
    out_dir: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Write the sentence corpus, the math splits and the vocabulary.
    GenCorpus {
        #[command(flatten)]
        run: RunFlags,
        #[arg(long)]
        sentences: Option<usize>,
        #[arg(long)]
        math_per_split: Option<usize>,
    },
    /// Train on a corpus file; writes the checkpoint and the loss log.
    Train {
        #[command(flatten)]
        run: RunFlags,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Exact-match, token accuracy and BLEU of greedy reconstructions.
    Reconstruct {
        #[command(flatten)]
        model: ModelFlags,
        #[arg(long)]
        corpus: PathBuf,
    },
    /// Interpolation paths and their smoothness.
    Interpolate {
        #[command(flatten)]
        model: ModelFlags,
        #[arg(long)]
        corpus: PathBuf,
        /// Number of random (source, target) pairs.
        #[arg(long, default_value_t = 100)]
        pairs: usize,
        #[arg(long)]
        source: Option<String>,
        #[arg(long)]
        target: Option<String>,
        /// Use each sampled source as its own target.
        #[arg(long)]
        same: bool,
        #[arg(long, default_value_t = 0.1)]
        step: f64,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
    /// Re-sample one latent position and decode the variants.
    Traverse {
        #[command(flatten)]
        model: ModelFlags,
        #[arg(long)]
        sentence: String,
        #[arg(long)]
        position: usize,
        #[arg(long, default_value_t = 10)]
        n: usize,
    },
    /// Decode the re-quantised sum of two sentences' latents.
    Arith {
        #[command(flatten)]
        model: ModelFlags,
        #[arg(long)]
        a: String,
        #[arg(long)]
        b: String,
    },
    /// Codebook usage per role-content pair.
    Disentangle {
        #[command(flatten)]
        model: ModelFlags,
        #[arg(long)]
        corpus: PathBuf,
    },
    /// Fit a region tree and move sentences along its path.
    Tree {
        #[command(flatten)]
        model: ModelFlags,
        #[arg(long)]
        corpus: PathBuf,
        /// kind:source,target with kind one of topic, predicate, argument.
        #[arg(long, default_value = "predicate:causes,means")]
        region: String,
        #[arg(long, default_value_t = 100)]
        moves: usize,
        #[arg(long, default_value_t = 6)]
        max_depth: usize,
        #[arg(long, default_value_t = 5)]
        min_leaf: usize,
    },
    /// Conclusions from premise pairs by latent substitution.
    Infer {
        #[command(flatten)]
        model: ModelFlags,
        /// One pair per line: premise 1, a tab, premise 2.
        #[arg(long)]
        premises: PathBuf,
        #[arg(long, default_value = "arg_sub")]
        op: String,
    },
}

fn resolve(run: &RunFlags) -> Result<RunConfig> {
    let mut cfg = match &run.config {
        Some(p) => RunConfig::load(p).with_context(|| format!("reading {}", p.display()))?,
        None => RunConfig::default(),
    };
    cfg.apply_env(std::env::vars())?;
    if let Some(s) = run.seed {
        cfg.seed = s;
    }
    if let Some(d) = &run.out_dir {
        cfg.out_dir = d.clone();
    }
    Ok(cfg)
}

fn write(dir: &Path, name: &str, contents: &str) -> Result<PathBuf> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let path = dir.join(name);
    write_atomic(&path, contents.as_bytes()).with_context(|| format!("writing {}", path.display()))?;
    Ok(path)
}

fn read_corpus(path: &Path) -> Result<Vec<AnnotatedSentence>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let corpus = corpus_from_str(&text)?;
    if corpus.is_empty() {
        bail!(VqlError::Input(format!("{} holds no sentences", path.display())));
    }
    Ok(corpus)
}

fn load(path: &Path) -> Result<VqAutoencoder32> {
    checkpoint::load(path).with_context(|| format!("loading {}", path.display()))
}

fn grammar_sentence(text: &str) -> Result<AnnotatedSentence> {
    let toks: Vec<&str> = text.split_whitespace().collect();
    parse_sentence(&toks).ok_or_else(|| VqlError::Input(format!("not a grammar sentence: {text:?}")).into())
}

fn words(ae: &VqAutoencoder32, text: &str) -> Result<Vec<usize>> {
    let toks: Vec<&str> = text.split_whitespace().collect();
    Ok(ae.ids_of(&toks)?)
}

fn gen_corpus(run: &RunFlags, sentences: Option<usize>, math: Option<usize>) -> Result<String> {
    let mut cfg = resolve(run)?;
    if let Some(n) = sentences {
        cfg.corpus.sentences = n;
    }
    if let Some(n) = math {
        cfg.corpus.math_per_split = n;
    }
    cfg.validate()?;
    let corpus = training_corpus(cfg.seed, cfg.corpus.sentences, &shark_premises());
    let mut math_lines = String::new();
    for split in Split::ALL {
        for e in generate_math(cfg.seed, cfg.corpus.math_per_split, split) {
            math_lines.push_str(&e.to_line());
            math_lines.push('\n');
        }
    }
    let vocab = Vocabulary::from_words(all_words());
    let dir = &cfg.out_dir;
    write(dir, "corpus.txt", &corpus_to_string(&corpus))?;
    write(dir, "math.tsv", &math_lines)?;
    write(dir, "vocab.txt", &vocab.to_file_string())?;
    write(dir, "config.json", &cfg.to_json()?)?;
    Ok(format!(
        "{} sentences, {} math expressions, {} words -> {}\n",
        corpus.len(),
        cfg.corpus.math_per_split * Split::ALL.len(),
        vocab.words().len(),
        dir.display()
    ))
}

fn train(run: &RunFlags, corpus: &Path, epochs: Option<usize>) -> Result<String> {
    let mut cfg = resolve(run)?;
    if let Some(e) = epochs {
        cfg.train.epochs = e;
    }
    let sentences = read_corpus(corpus)?;
    let vocab = Vocabulary::from_words(all_words());
    cfg.model.vocab_size = vocab.len();
    cfg.validate()?;
    let data: Vec<Vec<usize>> = sentences
        .iter()
        .map(|s| s.tokens.iter().map(|w| vocab.id(w)).collect())
        .collect();
    let mut ae = initialise::<f32>(cfg.model.clone(), cfg.quantizer, vocab, &data, cfg.seed)?;
    let mut trainer = Trainer::new(&ae, cfg.train, cfg.seed)?;
    let mut log = String::from(LOSS_LOG_HEADER);
    log.push('\n');
    let mut out = String::new();
    trainer.fit(&mut ae, &data, |s| {
        log.push_str(&s.csv_row());
        log.push('\n');
        eprintln!("{}", s.csv_row());
    })?;
    let dir = &cfg.out_dir;
    fs::create_dir_all(dir)?;
    let ckpt = dir.join("model.ckpt");
    checkpoint::save(&ae, &ckpt).with_context(|| format!("writing {}", ckpt.display()))?;
    write(dir, "loss.csv", &log)?;
    write(dir, "config.json", &cfg.to_json()?)?;
    let _ = writeln!(out, "trained {} epochs on {} sentences -> {}", cfg.train.epochs, data.len(), ckpt.display());
    Ok(out)
}

fn interpolate_cmd(
    model: &ModelFlags,
    corpus: &Path,
    n_pairs: usize,
    endpoints: (Option<String>, Option<String>),
    same: bool,
    step: f64,
    seed: u64,
) -> Result<String> {
    let ae = load(&model.checkpoint)?;
    let mut sentences = read_corpus(corpus)?;
    let pairs = match endpoints {
        (Some(s), Some(t)) => {
            sentences = vec![grammar_sentence(&s)?, grammar_sentence(&t)?];
            vec![(0, if same { 0 } else { 1 })]
        }
        (None, None) => {
            let mut p = sample_pairs(sentences.len(), n_pairs, seed)?;
            if same {
                p.iter_mut().for_each(|x| x.1 = x.0);
            }
            p
        }
        _ => bail!(VqlError::Input("--source and --target go together".into())),
    };
    let runs = interpolation_runs(&ae, &sentences, &pairs, step)?;
    let dir = model.out_dir.join("paths");
    let mut report = String::from("pair\tsource\ttarget\tIS\n");
    for (k, r) in runs.iter().enumerate() {
        write(&dir, &format!("pair_{k:03}.tsv"), &r.path.dump(&ae))?;
        let _ = writeln!(
            report,
            "{k}\t{}\t{}\t{:.6}",
            sentences[r.source].text(),
            sentences[r.target].text(),
            r.smoothness
        );
    }
    let (avg, max, min) = smoothness_summary(&runs);
    let _ = writeln!(report, "# avg IS {avg:.6}\n# max IS {max:.6}\n# min IS {min:.6}");
    write(&model.out_dir, "is_report.tsv", &report)?;
    Ok(format!("avg IS\tmax IS\tmin IS\n{avg:.4}\t{max:.4}\t{min:.4}\n"))
}

fn run(cli: Cli) -> Result<String> {
    match cli.command {
        Command::GenCorpus {
            run,
            sentences,
            math_per_split,
        } => gen_corpus(&run, sentences, math_per_split),
        Command::Train { run, corpus, epochs } => train(&run, &corpus, epochs),
        Command::Reconstruct { model, corpus } => {
            let ae = load(&model.checkpoint)?;
            let rep = reconstruction(&ae, &read_corpus(&corpus)?)?;
            let text = rep.render();
            write(&model.out_dir, "reconstruction.tsv", &text)?;
            let mut s = format!(
                "exact_match {:.4}\ntoken_accuracy {:.4}\n",
                rep.exact_match, rep.token_accuracy
            );
            for (n, b) in rep.bleu.iter().enumerate() {
                let _ = writeln!(s, "bleu{} {b:.4}", n + 1);
            }
            Ok(s)
        }
        Command::Interpolate {
            model,
            corpus,
            pairs,
            source,
            target,
            same,
            step,
            seed,
        } => interpolate_cmd(&model, &corpus, pairs, (source, target), same, step, seed),
        Command::Traverse {
            model,
            sentence,
            position,
            n,
        } => {
            let ae = load(&model.checkpoint)?;
            let q = ae.quantize(&words(&ae, &sentence)?)?;
            let mut s = String::from("variant\tindex\tdecoded\n");
            for (k, (idx, dec)) in traverse_position(&ae, &q.indices, position, n)?.iter().enumerate() {
                let _ = writeln!(s, "{k}\t{}\t{}", idx[position], ae.text(dec));
            }
            write(&model.out_dir, "traverse.tsv", &s)?;
            Ok(s)
        }
        Command::Arith { model, a, b } => {
            let ae = load(&model.checkpoint)?;
            let za = ae.quantize(&words(&ae, &a)?)?.vectors;
            let zb = ae.quantize(&words(&ae, &b)?)?.vectors;
            let (_, dec) = latent_arithmetic_add(&ae, &za, &zb)?;
            let s = format!("{}\n", ae.text(&dec));
            write(&model.out_dir, "arith.txt", &s)?;
            Ok(s)
        }
        Command::Disentangle { model, corpus } => {
            let ae = load(&model.checkpoint)?;
            let stats = disentanglement_stats(&ae, &read_corpus(&corpus)?)?;
            let mut s = String::from("role-content\toccurrences\tNUM centers\tAVG dis\tMAX dis\tMIN dis\n");
            for r in &stats {
                let _ = writeln!(
                    s,
                    "{}\t{}\t{}\t{:.4}\t{:.4}\t{:.4}",
                    r.label, r.occurrences, r.num_centers, r.avg_dis, r.max_dis, r.min_dis
                );
            }
            write(&model.out_dir, "disentangle.tsv", &s)?;
            Ok(s)
        }
        Command::Tree {
            model,
            corpus,
            region,
            moves,
            max_depth,
            min_leaf,
        } => {
            let ae = load(&model.checkpoint)?;
            let region: RegionSpec = region.parse()?;
            let params = vqlatent::tree::TreeParams { max_depth, min_leaf };
            let rep = tree_experiment(&ae, &read_corpus(&corpus)?, &region, params, moves)?;
            write(&model.out_dir, "tree.json", &rep.tree.to_json()?)?;
            let text = rep.render();
            write(&model.out_dir, "tree_report.txt", &text)?;
            Ok(text)
        }
        Command::Infer { model, premises, op } => {
            let ae = load(&model.checkpoint)?;
            let op: SubstitutionOp = op.parse()?;
            let text = fs::read_to_string(&premises).with_context(|| format!("reading {}", premises.display()))?;
            let mut pairs = Vec::new();
            for line in text.lines().filter(|l| !l.trim().is_empty()) {
                let (a, b) = line
                    .split_once('\t')
                    .ok_or_else(|| VqlError::Format(format!("expected two tab-separated premises: {line:?}")))?;
                pairs.push((grammar_sentence(a)?, grammar_sentence(b)?));
            }
            let records = inference_runs(&ae, &pairs, op)?;
            let mut s = String::from("exact\tp1\tp2\texpected\tdecoded\n");
            for r in &records {
                let _ = writeln!(s, "{}\t{}\t{}\t{}\t{}", r.exact() as u8, r.p1, r.p2, r.expected, r.decoded);
            }
            let _ = writeln!(s, "# exact_match {:.4}", exact_match_rate(&records));
            write(&model.out_dir, &format!("infer_{op}.tsv"), &s)?;
            Ok(s)
        }
    }
}

/// 3 for contract and validation failures, 4 for I/O.
fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<VqlError>() {
            return match e {
                VqlError::Io(_) => 4,
                _ => 3,
            };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return 4;
        }
    }
    3
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(out) => {
            print!("{out}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
