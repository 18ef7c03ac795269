//! Command-line interface.

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::config::RunConfig;
use crate::data::{gen_synthetic_corpus, load_corpus, write_corpus, Example, SynthConfig, Vocabs};
use crate::error::{Error, Result};
use crate::model::{count_params, Model, Variant};
use crate::quality::{
    length_bucketed_metrics, pos_class_distribution, pos_mse, repetition_rate, Bucket, BucketStat,
    PosClass, PosClassDist, RepetitionReport, TagMapping, DEFAULT_BUCKETS,
};
use crate::rouge::{corpus_rouge, rouge_l, rouge_n, CorpusRouge};
use crate::tensor::{op_suite, seeded_rng};
use crate::train::{load_run, model_gradcheck, save_run, summarize_with, Trainer};

/// Relative-error bound for `gradcheck`.
pub const GRADCHECK_TOL: f64 = 1e-6;

#[derive(Parser, Debug)]
#[command(name = "scstsum", version, about = "Syntax-aware pointer-generator summarizer with self-critical training")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train a model (cross-entropy, then mixed with the policy-gradient term).
    Train(TrainArgs),
    /// Summarize a corpus with a trained run.
    Generate(GenerateArgs),
    /// ROUGE-1/2/L of candidate summaries against references.
    Evaluate(EvaluateArgs),
    /// Repetition, POS-class and length-bucketed quality report.
    Analyze(AnalyzeArgs),
    /// Finite-difference check of every op and of two tiny full models.
    Gradcheck(GradcheckArgs),
    /// Write a synthetic corpus.
    Synth(SynthArgs),
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Flat key = value configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override one key, e.g. `--set hidden=64`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    #[arg(long)]
    pub variant: Option<Variant>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    Greedy,
    Beam,
}

#[derive(Args, Debug)]
pub struct GenerateArgs {
    /// Run directory written by `train`.
    #[arg(long)]
    pub run: PathBuf,
    #[arg(long)]
    pub corpus: PathBuf,
    /// One summary per line.
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the corpus targets, line-aligned with `out`.
    #[arg(long)]
    pub gold_out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Mode::Greedy)]
    pub mode: Mode,
    #[arg(long, default_value_t = 1)]
    pub beam: usize,
    #[arg(long)]
    pub max_len: Option<usize>,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub candidates: PathBuf,
    #[arg(long)]
    pub references: PathBuf,
    /// Write the JSON here as well as to stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct AnalyzeArgs {
    #[arg(long)]
    pub candidates: PathBuf,
    #[arg(long)]
    pub references: PathBuf,
    /// POS tags of the candidates, line- and token-aligned.
    #[arg(long)]
    pub candidate_tags: Option<PathBuf>,
    #[arg(long)]
    pub reference_tags: Option<PathBuf>,
    /// `TAG CLASS` lines replacing the default tag-class mapping.
    #[arg(long)]
    pub mapping: Option<PathBuf>,
    /// Comma-separated inclusive ranges, e.g. `1-5,6-10`.
    #[arg(long)]
    pub buckets: Option<String>,
    #[arg(long)]
    pub out_json: Option<PathBuf>,
    #[arg(long)]
    pub out_csv: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Central-difference step.
    #[arg(long, default_value_t = 1e-5)]
    pub step: f64,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    #[arg(long, default_value_t = 500)]
    pub n: usize,
    #[arg(long, default_value_t = 60)]
    pub vocab_size: usize,
    #[arg(long, default_value_t = 12)]
    pub max_src_len: usize,
    #[arg(long)]
    pub unique_names: bool,
    /// Examples after the first `n` go to `dev_out`.
    #[arg(long, default_value_t = 0)]
    pub dev_n: usize,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub dev_out: Option<PathBuf>,
}

/// Parses arguments, runs the command and returns the process exit code.
/// Failures print one JSON line `{"error": kind, "message": ...}` to stderr.
pub fn main_with_args(args: impl IntoIterator<Item = OsString>) -> i32 {
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .try_init();
    match run(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            let line = serde_json::json!({ "error": e.kind(), "message": e.to_string() });
            eprintln!("{line}");
            1
        }
    }
}

pub fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Train(a) => train(a),
        Command::Generate(a) => generate(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Analyze(a) => analyze(a),
        Command::Gradcheck(a) => gradcheck(a),
        Command::Synth(a) => synth(a),
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    Ok(BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?))
}

/// One whitespace-tokenized sequence per line.
pub fn read_token_lines(path: &Path) -> Result<Vec<Vec<String>>> {
    Ok(read(path)?
        .lines()
        .map(|l| l.split_whitespace().map(String::from).collect())
        .collect())
}

pub fn write_token_lines(path: &Path, lines: &[Vec<String>]) -> Result<()> {
    let mut w = create(path)?;
    for l in lines {
        writeln!(w, "{}", l.join(" ")).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

fn load_examples(path: &Path) -> Result<Vec<Example>> {
    let report = load_corpus(path)?;
    if !report.skipped.is_empty() {
        log::warn!("{}: skipped {} malformed lines", path.display(), report.skipped.len());
    }
    Ok(report.examples)
}

pub fn resolve_config(args: &TrainArgs) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Some(path) = &args.config {
        cfg.apply_text(&read(path)?)?;
    }
    cfg.apply_env(std::env::vars())?;
    for o in &args.overrides {
        cfg.apply_override(o)?;
    }
    if let Some(v) = args.variant {
        cfg.model.variant = v;
    }
    cfg.validate()?;
    Ok(cfg)
}

pub const LOG_FILE: &str = "train_log.csv";
pub const CONFIG_FILE: &str = "effective.conf";
pub const SUMMARY_FILE: &str = "train_summary.json";

fn train(args: TrainArgs) -> Result<()> {
    let cfg = resolve_config(&args)?;
    let rendered = cfg.render();
    for line in rendered.lines() {
        log::info!("config: {line}");
    }
    let train_path = cfg.train_corpus.clone().expect("validated");
    let train_set = load_examples(&train_path)?;
    let dev_set = match &cfg.dev_corpus {
        Some(p) => load_examples(p)?,
        None => Vec::new(),
    };
    let tcfg = cfg.train_config();
    let mut rng = seeded_rng(tcfg.seed);
    let (model, vocabs) = match &cfg.init_from {
        Some(dir) => {
            let (model, vocabs, _) = load_run(dir)?;
            if model.config.variant != cfg.model.variant {
                return Err(Error::Config(format!(
                    "init_from holds a {} model but variant is {}",
                    model.config.variant, cfg.model.variant
                )));
            }
            (model, vocabs)
        }
        None => {
            let vocabs = Vocabs::build(&train_set, cfg.model.vocab_size, cfg.min_count);
            let model = Model::init(cfg.model.sized_for(&vocabs), &mut rng)?;
            (model, vocabs)
        }
    };
    log::info!(
        "{} model, {} parameters, {} word types, {} training examples",
        model.config.variant,
        count_params(&model.config),
        vocabs.words.len(),
        train_set.len()
    );
    let out = &cfg.output_dir;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    fs::write(out.join(CONFIG_FILE), &rendered).map_err(|e| Error::io(out.join(CONFIG_FILE), e))?;
    let log_path = out.join(LOG_FILE);
    let mut log = create(&log_path)?;
    let mut trainer = Trainer::new(model, vocabs, tcfg.clone(), rng)?;
    let summary = trainer.fit(&train_set, &dev_set, &mut log)?;
    log.flush().map_err(|e| Error::io(&log_path, e))?;
    save_run(out, &trainer.model, &trainer.vocabs, &tcfg)?;
    write_json(&out.join(SUMMARY_FILE), &summary)?;
    log::info!(
        "finished after {} steps ({} epochs); run saved to {}",
        summary.steps,
        summary.epochs,
        out.display()
    );
    Ok(())
}

fn generate(args: GenerateArgs) -> Result<()> {
    let (model, vocabs, meta) = load_run(&args.run)?;
    let examples = load_examples(&args.corpus)?;
    let beam = match args.mode {
        Mode::Greedy => 1,
        Mode::Beam => args.beam,
    };
    if beam == 0 {
        return Err(Error::Config("beam must be at least 1".into()));
    }
    let max_len = args.max_len.unwrap_or(meta.train.max_decode_len);
    let out = summarize_with(&model, &vocabs, &examples, args.batch_size, max_len, beam)?;
    write_token_lines(&args.out, &out)?;
    if let Some(gold) = &args.gold_out {
        let refs: Vec<Vec<String>> = examples.iter().map(|e| e.target.clone()).collect();
        write_token_lines(gold, &refs)?;
    }
    log::info!("wrote {} summaries to {}", out.len(), args.out.display());
    Ok(())
}

fn evaluate(args: EvaluateArgs) -> Result<()> {
    let cands = read_token_lines(&args.candidates)?;
    let refs = read_token_lines(&args.references)?;
    let scores = corpus_rouge(&cands, &refs)?;
    println!("{}", serde_json::to_string(&scores)?);
    if let Some(p) = &args.out {
        write_json(p, &scores)?;
    }
    Ok(())
}

pub fn parse_buckets(spec: &str) -> Result<Vec<Bucket>> {
    spec.split(',')
        .map(|part| {
            let (lo, hi) = part
                .trim()
                .split_once('-')
                .ok_or_else(|| Error::Config(format!("bucket `{part}` is not LO-HI")))?;
            let n = |s: &str| s.trim().parse::<usize>().map_err(|_| Error::Config(format!("bucket `{part}`")));
            Ok(Bucket { lo: n(lo)?, hi: n(hi)? })
        })
        .collect()
}

#[derive(Debug, Serialize)]
pub struct RougeByLength {
    pub r1: Vec<BucketStat>,
    pub r2: Vec<BucketStat>,
    pub rl: Vec<BucketStat>,
}

#[derive(Debug, Serialize)]
pub struct PosReport {
    pub classes: Vec<String>,
    pub generated: Option<PosClassDist>,
    pub gold: Option<PosClassDist>,
    pub mse: Option<f64>,
}

#[derive(Debug, Serialize)]
pub struct QualityReport {
    pub n: usize,
    pub rouge: CorpusRouge,
    pub repetition: RepetitionReport,
    pub rouge_by_length: RougeByLength,
    pub pos: PosReport,
}

pub fn quality_report(
    cands: &[Vec<String>],
    refs: &[Vec<String>],
    cand_tags: Option<&[Vec<String>]>,
    ref_tags: Option<&[Vec<String>]>,
    mapping: &TagMapping,
    buckets: &[Bucket],
) -> Result<QualityReport> {
    let rouge = corpus_rouge(cands, refs)?;
    let repetition = repetition_rate(cands, refs, buckets)?;
    let by = |f: &dyn Fn(&[String], &[String]) -> f64| {
        let items: Vec<(usize, f64)> = cands.iter().zip(refs).map(|(c, r)| (c.len(), f(c, r))).collect();
        length_bucketed_metrics(&items, buckets)
    };
    let rouge_by_length = RougeByLength {
        r1: by(&|c, r| rouge_n(c, r, 1).f1)?,
        r2: by(&|c, r| rouge_n(c, r, 2).f1)?,
        rl: by(&|c, r| rouge_l(c, r).f1)?,
    };
    let generated = cand_tags.map(|t| pos_class_distribution(cands, t, mapping)).transpose()?;
    let gold = ref_tags.map(|t| pos_class_distribution(refs, t, mapping)).transpose()?;
    let mse = match (&generated, &gold) {
        (Some(a), Some(b)) => Some(pos_mse(a, b)),
        _ => None,
    };
    Ok(QualityReport {
        n: cands.len(),
        rouge,
        repetition,
        rouge_by_length,
        pos: PosReport {
            classes: PosClass::ALL.iter().map(|c| c.to_string()).collect(),
            generated,
            gold,
            mse,
        },
    })
}

pub const BUCKET_CSV_HEADER: &str = "bucket,n,repetition_mean,r1_mean,r1_ci95,r2_mean,r2_ci95,rl_mean,rl_ci95";

pub fn bucket_csv(report: &QualityReport) -> String {
    let f = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
    let mut out = format!("{BUCKET_CSV_HEADER}\n");
    for (i, rep) in report.repetition.buckets.iter().enumerate() {
        let (r1, r2, rl) = (
            &report.rouge_by_length.r1[i],
            &report.rouge_by_length.r2[i],
            &report.rouge_by_length.rl[i],
        );
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            rep.bucket.label(),
            rep.n,
            f(rep.mean),
            f(r1.mean),
            f(r1.ci95),
            f(r2.mean),
            f(r2.ci95),
            f(rl.mean),
            f(rl.ci95)
        ));
    }
    out
}

fn analyze(args: AnalyzeArgs) -> Result<()> {
    let cands = read_token_lines(&args.candidates)?;
    let refs = read_token_lines(&args.references)?;
    let cand_tags = args.candidate_tags.as_deref().map(read_token_lines).transpose()?;
    let ref_tags = args.reference_tags.as_deref().map(read_token_lines).transpose()?;
    let mapping = match &args.mapping {
        Some(p) => TagMapping::parse(&read(p)?)?,
        None => TagMapping::default(),
    };
    let buckets = match &args.buckets {
        Some(s) => parse_buckets(s)?,
        None => DEFAULT_BUCKETS.to_vec(),
    };
    let report = quality_report(
        &cands,
        &refs,
        cand_tags.as_deref(),
        ref_tags.as_deref(),
        &mapping,
        &buckets,
    )?;
    let csv = bucket_csv(&report);
    match &args.out_json {
        Some(p) => write_json(p, &report)?,
        None => println!("{}", serde_json::to_string_pretty(&report)?),
    }
    if let Some(p) = &args.out_csv {
        fs::write(p, &csv).map_err(|e| Error::io(p, e))?;
    } else {
        print!("{csv}");
    }
    Ok(())
}

/// Every op case plus the baseline and pos-deptag models at tiny dims.
pub fn gradcheck_table(seed: u64, h: f64) -> Result<Vec<(String, f64)>> {
    let mut rng = seeded_rng(seed);
    let mut rows: Vec<(String, f64)> = op_suite(&mut rng, h)?
        .into_iter()
        .map(|(n, e)| (n.to_string(), e))
        .collect();
    for v in [Variant::Baseline, Variant::PosDeptag] {
        rows.push((format!("model/{v}"), model_gradcheck(v, seed, h)?));
    }
    Ok(rows)
}

fn gradcheck(args: GradcheckArgs) -> Result<()> {
    let rows = gradcheck_table(args.seed, args.step)?;
    let mut failed = 0;
    println!("check\tmax_rel_err\tstatus");
    for (name, err) in &rows {
        let ok = *err < GRADCHECK_TOL;
        failed += usize::from(!ok);
        println!("{name}\t{err:.3e}\t{}", if ok { "PASS" } else { "FAIL" });
    }
    if failed > 0 {
        return Err(Error::GradCheck {
            failed,
            total: rows.len(),
        });
    }
    Ok(())
}

fn synth(args: SynthArgs) -> Result<()> {
    let cfg = SynthConfig {
        seed: args.seed,
        n_examples: args.n + args.dev_n,
        vocab_size: args.vocab_size,
        max_src_len: args.max_src_len,
        unique_names: args.unique_names,
    };
    let all = gen_synthetic_corpus(&cfg)?;
    let (train, dev) = all.split_at(args.n);
    write_corpus(&args.out, train)?;
    match (&args.dev_out, dev.is_empty()) {
        (Some(p), false) => write_corpus(p, dev)?,
        (None, false) => return Err(Error::Config("dev_n > 0 needs --dev-out".into())),
        _ => {}
    }
    log::info!("wrote {} examples to {}", train.len(), args.out.display());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    #[test]
    fn bucket_spec_parsing() {
        assert_eq!(parse_buckets("1-5, 6-10").unwrap(), DEFAULT_BUCKETS[..2].to_vec());
        assert!(parse_buckets("1-").is_err());
        assert!(parse_buckets("x").is_err());
    }

    #[test]
    fn report_and_csv() {
        let cands = vec![toks("a a b"), toks("c d")];
        let refs = vec![toks("a b c"), toks("c d")];
        let tags = vec![toks("DT DT NN"), toks("VB NN")];
        let r = quality_report(&cands, &refs, Some(&tags), None, &TagMapping::default(), &DEFAULT_BUCKETS).unwrap();
        assert_eq!(r.repetition.sum, 3.0);
        assert!(r.pos.mse.is_none());
        assert!((r.pos.generated.as_ref().unwrap().get(PosClass::DT) - 40.0).abs() < 1e-12);
        let csv = bucket_csv(&r);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], BUCKET_CSV_HEADER);
        assert_eq!(lines.len(), 5);
        assert!(lines[1].starts_with("1-5,2,1.500000,"));
        assert!(lines[4].starts_with("16-20,0,,"));
    }

    #[test]
    fn clap_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
