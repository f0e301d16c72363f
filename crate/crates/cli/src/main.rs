//! `charlm`: command-line front end of the character-level language-model
//! toolkit.

mod args;

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::error::ErrorKind as ClapErrorKind;
use clap::Parser;
use log::{info, warn};

use charlm_core::analysis::{compare_embeddings, extract_output_embeddings, AlignmentReport};
use charlm_core::corpus::{build_vocabulary, encode_file, Vocabulary, VowelSet};
use charlm_core::evaluation::{
    interpolate, optimize_lambda, score_corpus, vocabulary_classes, word_perplexity, NllStream, PplReport,
    ScoreOptions,
};
use charlm_core::harness::{
    generate_synthetic_pair, parse_report, render_report, run_datasize_sweep, run_transfer_grid,
    write_synthetic_family, ExperimentConfig, GridReport, ReportFormat, SynthSpec,
};
use charlm_core::training::{
    init_model, load_checkpoint, save_checkpoint, train, transfer_initialize, ModelCheckpoint, TrainingHistory,
};
use charlm_core::{Error, ErrorKind, Result};

use args::{Cli, Command, ExperimentArgs, ModelSettings, OutputFormat, SynthArgs};

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ClapErrorKind::DisplayHelp | ClapErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    let level = if cli.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e.kind() {
        ErrorKind::Usage => 1,
        ErrorKind::Data => 2,
        ErrorKind::Numerical => 3,
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::BuildVocab { corpus, out } => build_vocab(&corpus, &out),
        Command::Train {
            vocab,
            train: train_path,
            dev,
            out,
            seed,
            id,
            history,
            settings,
        } => {
            let vocab = Vocabulary::load(&vocab)?;
            let s = settings.resolve()?;
            let arch = s.arch.with_vocab(vocab.len())?;
            let mut start = init_model(arch, &vocab.hash(), seed);
            start.id = id.unwrap_or_else(|| stem(&out));
            fit(start, &vocab, &train_path, &dev, &out, history, s, seed)
        }
        Command::Transfer {
            source,
            depth,
            vocab,
            seed,
            out,
        } => {
            let source = load_checkpoint(&source)?;
            let hash = match vocab {
                Some(p) => Vocabulary::load(&p)?.hash(),
                None => source.vocab_hash.clone(),
            };
            let ckpt = transfer_initialize(&source, usize::from(depth), &hash, seed)?;
            save_checkpoint(&ckpt, &out)?;
            println!("{}\t{}", ckpt.id, out.display());
            Ok(())
        }
        Command::Finetune {
            init,
            vocab,
            train: train_path,
            dev,
            out,
            seed,
            id,
            history,
            settings,
        } => {
            let vocab = Vocabulary::load(&vocab)?;
            let mut start = load_checkpoint(&init)?;
            if let Some(id) = id {
                start.id = id;
            }
            let s = settings.resolve()?;
            fit(start, &vocab, &train_path, &dev, &out, history, s, seed)
        }
        Command::Score {
            model,
            vocab,
            corpus,
            vowels,
            language,
            stream_out,
            batch_size,
            seq_len,
            format,
        } => {
            let ckpt = load_checkpoint(&model)?;
            let vocab = Vocabulary::load(&vocab)?;
            let corpus = encode_file(&corpus, &vocab)?;
            let vowels = match (vowels, language) {
                (Some(v), _) => VowelSet::new(&v),
                (None, Some(l)) => VowelSet::for_language(&l),
                (None, None) => VowelSet::english(),
            };
            let classes = vocabulary_classes(&vocab, &vowels);
            let stream = score_corpus(&ckpt, &corpus, &classes, ScoreOptions { batch_size, seq_len })?;
            if let Some(p) = stream_out {
                stream.save(&p)?;
            }
            let report = PplReport::from_stream(&stream)?;
            print!("{}", if format == OutputFormat::Tsv { report.to_tsv() } else { report.to_text() });
            Ok(())
        }
        Command::Interpolate {
            a,
            b,
            dev_a,
            dev_b,
            lambda,
            out,
        } => {
            let a = NllStream::load(&a)?;
            let b = NllStream::load(&b)?;
            let lambda = match (lambda, dev_a, dev_b) {
                (Some(l), None, None) => l,
                (None, Some(da), Some(db)) => {
                    let (l, dev_ppl) = optimize_lambda(&NllStream::load(&da)?, &NllStream::load(&db)?)?;
                    println!("dev_ppl\t{dev_ppl}");
                    l
                }
                _ => {
                    return Err(Error::Config(
                        "give either --lambda or both --dev-a and --dev-b".into(),
                    ))
                }
            };
            let mixed = interpolate(&a, &b, lambda)?;
            println!("lambda\t{lambda}");
            println!("ppl_a\t{}", word_perplexity(&a)?);
            println!("ppl_b\t{}", word_perplexity(&b)?);
            println!("ppl_interpolated\t{}", word_perplexity(&mixed)?);
            if let Some(p) = out {
                mixed.save(&p)?;
            }
            Ok(())
        }
        Command::AnalyzeEmbeddings {
            source,
            target,
            exclude_zero_rows,
        } => {
            let s = extract_output_embeddings(&load_checkpoint(&source)?);
            let t = extract_output_embeddings(&load_checkpoint(&target)?);
            let report = compare_embeddings(&s, &t, exclude_zero_rows)?;
            println!("{}", AlignmentReport::TSV_HEADER);
            println!("{}", report.to_tsv_line());
            Ok(())
        }
        Command::SynthGen(args) => synth_gen(args),
        Command::Grid(args) => {
            let config = experiment(&args)?;
            let report = run_transfer_grid(&config)?;
            write_reports(&config, &report, args.format)
        }
        Command::Sweep { experiment: args, fractions } => {
            let mut config = experiment(&args)?;
            if let Some(f) = fractions {
                config.data_fractions = Some(f);
                config.validate()?;
            }
            let report = run_datasize_sweep(&config)?;
            write_reports(&config, &report, args.format)
        }
        Command::Report { input, format, gains } => {
            let report = parse_report(&fs::read_to_string(&input)?)?;
            print!("{}", render_report(&report, format.into()));
            if gains {
                print_gains(&report);
            }
            Ok(())
        }
    }
}

fn stem(path: &Path) -> String {
    path.file_stem().map_or_else(|| "model".to_string(), |s| s.to_string_lossy().into_owned())
}

fn build_vocab(corpora: &[(String, PathBuf)], out: &Path) -> Result<()> {
    let mut readers = Vec::with_capacity(corpora.len());
    for (lang, path) in corpora {
        readers.push((lang.clone(), BufReader::new(File::open(path)?)));
    }
    let vocab = build_vocabulary(readers)?;
    vocab.save(out)?;
    println!("units\t{}", vocab.len());
    println!("hash\t{}", vocab.hash());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn fit(
    start: ModelCheckpoint,
    vocab: &Vocabulary,
    train_path: &Path,
    dev_path: &Path,
    out: &Path,
    history: Option<PathBuf>,
    settings: ModelSettings,
    seed: u64,
) -> Result<()> {
    let train_corpus = encode_file(train_path, vocab)?;
    let dev_corpus = encode_file(dev_path, vocab)?;
    let config = charlm_core::training::TrainConfig { seed, ..settings.train };
    info!("training {} on {} sentences", start.id, train_corpus.len());
    let (ckpt, hist) = train(&start, &train_corpus, &dev_corpus, &config)?;
    save_checkpoint(&ckpt, out)?;
    let history = history.unwrap_or_else(|| out.with_extension("history.tsv"));
    write_history(&hist, &history)?;
    if let Some(best) = hist.best_dev_ppl() {
        println!("best_dev_word_ppl\t{best}");
    }
    println!("epochs\t{}", hist.epochs.len().saturating_sub(1));
    Ok(())
}

fn write_history(history: &TrainingHistory, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    history.write(&mut w)?;
    w.flush()?;
    Ok(())
}

fn synth_gen(args: SynthArgs) -> Result<()> {
    let spec = SynthSpec {
        alphabet_size: args.alphabet_size,
        n_states: args.n_states.unwrap_or(args.alphabet_size),
        relatedness: args.relatedness,
        sentences: args.sentences,
        mean_word_len: args.mean_word_len,
        mean_sent_len: args.mean_sent_len,
        seed: args.seed,
        successors: args.successors,
    };
    spec.validate()?;
    fs::create_dir_all(&args.out)?;
    if args.source.is_empty() {
        let (source, target) = generate_synthetic_pair(&spec)?;
        for (name, lines) in [("source.txt", source), ("target.txt", target)] {
            let mut text = lines.join("\n");
            text.push('\n');
            fs::write(args.out.join(name), text)?;
        }
        println!("wrote {} and {}", args.out.join("source.txt").display(), args.out.join("target.txt").display());
        return Ok(());
    }
    let langs = write_synthetic_family(&args.out, &spec, &args.target, args.target_sizes, &args.source)?;
    for (name, paths) in &langs {
        println!("[languages.{name}]");
        println!("train = {:?}", paths.train.display().to_string());
        println!("dev = {:?}", paths.dev.display().to_string());
        println!("test = {:?}", paths.test.display().to_string());
        if let Some(v) = &paths.vowels {
            println!("vowels = {v:?}");
        }
        println!();
    }
    Ok(())
}

fn experiment(args: &ExperimentArgs) -> Result<ExperimentConfig> {
    let mut config = ExperimentConfig::load(&args.config)?;
    if !args.seed.is_empty() {
        config.seeds = args.seed.clone();
    }
    if let Some(dir) = &args.output_dir {
        config.output_dir = dir.clone();
    }
    if let Some(depths) = &args.depths {
        config.depths = depths.clone();
    }
    if let Some(e) = args.max_epochs {
        config.train.max_epochs = e;
    }
    config.validate()?;
    Ok(config)
}

fn write_reports(config: &ExperimentConfig, report: &GridReport, format: OutputFormat) -> Result<()> {
    fs::write(config.output_dir.join("report.tsv"), render_report(report, ReportFormat::Delimited))?;
    fs::write(config.output_dir.join("report.txt"), render_report(report, ReportFormat::Text))?;
    print!("{}", render_report(report, format.into()));
    let failed = report.failures().count();
    if failed > 0 {
        warn!("{failed} of {} cells failed; see the status column", report.rows.len());
    }
    Ok(())
}

fn print_gains(report: &GridReport) {
    let mut cells: Vec<(&str, usize)> = report
        .rows
        .iter()
        .filter_map(|r| r.source.as_deref().map(|s| (s, r.depth)))
        .collect();
    cells.sort_unstable();
    cells.dedup();
    println!();
    println!("source\tdepth\tfraction\tmean_relative_gain");
    for (source, depth) in cells {
        for (fraction, gain) in report.mean_gain_by_fraction(source, depth) {
            println!("{source}\t{depth}\t{fraction}\t{gain}");
        }
    }
}
