use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use hippo_core::alignment::word_error_rate;
use hippo_core::ctc_gop::gop_features;
use hippo_core::curriculum::{select_view, TaskView, ViewSample};
use hippo_core::harness::checkpoint;
use hippo_core::harness::gradcheck::{gradcheck, GradcheckConfig};
use hippo_core::harness::metrics::MetricReport;
use hippo_core::harness::train::{evaluate_samples, predict_all, run_experiment};
use hippo_core::harness::TrainConfig;
use hippo_core::syncorpus::{generate_corpus, read_jsonl, transfer_scores, write_jsonl, UtteranceRecord};
use serde_json::json;

#[derive(Parser)]
#[command(name = "hippo", version, about = "Hierarchical pronunciation assessment toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct Common {
    /// Configuration file (JSON or `key = value` lines).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output file or directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Extra `key=value` overrides, repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Clone, Copy, ValueEnum)]
enum View {
    Easy,
    Hard,
}

impl From<View> for TaskView {
    fn from(v: View) -> Self {
        match v {
            View::Easy => TaskView::Easy,
            View::Hard => TaskView::Hard,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Switch {
    On,
    Off,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus as JSON lines.
    Synth {
        #[command(flatten)]
        common: Common,
    },
    /// Compute GOP features for every utterance of a corpus.
    Gopfeat {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, value_enum, default_value = "easy")]
        view: View,
    },
    /// Re-align transcriptions and transfer scores; reports WER.
    Align {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        corpus: PathBuf,
    },
    /// Train one or more trials and report held-out metrics.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long, value_enum)]
        curriculum: Option<Switch>,
        #[arg(long, value_enum)]
        cono: Option<Switch>,
    },
    /// Evaluate checkpoints on a corpus view.
    Eval {
        #[command(flatten)]
        common: Common,
        /// One or more checkpoint files; several are aggregated as trials.
        #[arg(long, required = true, num_args = 1..)]
        checkpoint: Vec<PathBuf>,
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "hard")]
        view: View,
        /// Write utterance embeddings and labels as CSV.
        #[arg(long)]
        dump_embeddings: Option<PathBuf>,
    },
    /// Finite-difference check of every parameter gradient.
    Gradcheck {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 8)]
        width: usize,
    },
}

fn load_config(common: &Common) -> Result<TrainConfig> {
    let mut config = match &common.config {
        Some(path) => TrainConfig::from_file(path)?,
        None => TrainConfig::default(),
    };
    if !common.overrides.is_empty() {
        config = config.with_overrides(&common.overrides)?;
    }
    if let Some(seed) = common.seed {
        config.seed = seed;
        config.corpus.seed = seed;
    }
    Ok(config)
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn read_corpus(path: &Path) -> Result<Vec<UtteranceRecord>> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    Ok(read_jsonl(BufReader::new(file))?)
}

fn corpus_for(config: &mut TrainConfig, path: Option<&Path>) -> Result<Vec<UtteranceRecord>> {
    let records = match path.or(config.corpus_path.as_deref()) {
        Some(p) => read_corpus(p)?,
        None => generate_corpus(&config.corpus)?,
    };
    config.model.fit_corpus(&records)?;
    Ok(records)
}

fn synth(common: &Common) -> Result<()> {
    let config = load_config(common)?;
    let records = generate_corpus(&config.corpus)?;
    write_jsonl(output(common.out.as_deref())?, &records)?;
    Ok(())
}

fn gopfeat(common: &Common, corpus: &Path, view: View) -> Result<()> {
    let records = read_corpus(corpus)?;
    let mut out = output(common.out.as_deref())?;
    for r in &records {
        let grid = r.grid()?;
        let phones = match view {
            View::Easy => &r.ref_phones,
            View::Hard => &r.hyp_phones,
        };
        let gop = gop_features(&grid, phones)?;
        serde_json::to_writer(&mut out, &json!({"utt_id": r.utt_id, "gop": gop.rows()}))?;
        writeln!(out)?;
    }
    out.flush()?;
    Ok(())
}

fn align_cmd(common: &Common, corpus: &Path) -> Result<()> {
    let records = read_corpus(corpus)?;
    let mut out = output(common.out.as_deref())?;
    let (mut errors, mut words) = (0.0, 0usize);
    for r in &records {
        let scores = transfer_scores(r)?;
        let wer = word_error_rate(&r.hyp_words, &r.ref_words);
        errors += wer * r.ref_words.len() as f64;
        words += r.ref_words.len();
        let line = json!({
            "utt_id": r.utt_id,
            "hyp_words": r.hyp_words,
            "hyp_phones": r.hyp_phones,
            "hyp_phone_to_word": r.hyp_phone_to_word,
            "hyp_scores": scores,
            "wer": wer,
        });
        serde_json::to_writer(&mut out, &line)?;
        writeln!(out)?;
    }
    let corpus_wer = if words == 0 { 0.0 } else { errors / words as f64 };
    serde_json::to_writer(
        &mut out,
        &json!({"summary": {"utterances": records.len(), "words": words, "corpus_wer": corpus_wer}}),
    )?;
    writeln!(out)?;
    out.flush()?;
    Ok(())
}

fn train_cmd(
    common: &Common,
    corpus: Option<&Path>,
    curriculum: Option<Switch>,
    cono: Option<Switch>,
) -> Result<()> {
    let mut config = load_config(common)?;
    if let Some(s) = curriculum {
        config.curriculum = matches!(s, Switch::On);
    }
    if let Some(s) = cono {
        config.cono = matches!(s, Switch::On);
    }
    if let Some(dir) = &common.out {
        config.out_dir = Some(dir.clone());
    }
    let records = corpus_for(&mut config, corpus)?;
    let experiment = run_experiment(&config, &records)?;
    print!("{}", experiment.report.to_text());
    if let Some(dir) = &config.out_dir {
        let mut f = BufWriter::new(File::create(dir.join("report.json"))?);
        serde_json::to_writer_pretty(&mut f, &experiment.report)?;
        f.flush()?;
        let mut f = BufWriter::new(File::create(dir.join("config.json"))?);
        serde_json::to_writer_pretty(&mut f, &config)?;
        f.flush()?;
    }
    Ok(())
}

fn dump_embeddings(path: &Path, samples: &[ViewSample], z: &[Vec<f64>]) -> Result<()> {
    let mut f = BufWriter::new(File::create(path)?);
    let d = z.first().map_or(0, Vec::len);
    let header: Vec<String> = (0..d).map(|i| format!("z{i}")).collect();
    writeln!(f, "utt_id,label,{}", header.join(","))?;
    for (s, row) in samples.iter().zip(z) {
        let values: Vec<String> = row.iter().map(|v| format!("{v:.10e}")).collect();
        writeln!(f, "{},{},{}", s.utt_id, s.label, values.join(","))?;
    }
    f.flush()?;
    Ok(())
}

fn eval_cmd(
    common: &Common,
    checkpoints: &[PathBuf],
    corpus: Option<&Path>,
    view: View,
    dump: Option<&Path>,
) -> Result<()> {
    let mut config = load_config(common)?;
    let records = corpus_for(&mut config, corpus)?;
    let samples: Vec<ViewSample> = records
        .iter()
        .map(|r| select_view(r, view.into()))
        .collect::<hippo_core::Result<_>>()?;
    let mut reports = Vec::with_capacity(checkpoints.len());
    for (k, path) in checkpoints.iter().enumerate() {
        let model = checkpoint::load(path).with_context(|| format!("loading {}", path.display()))?;
        if k == 0 {
            if let Some(dump) = dump {
                let preds = predict_all(&model, &samples)?;
                let z: Vec<Vec<f64>> = preds.into_iter().map(|p| p.z).collect();
                dump_embeddings(dump, &samples, &z)?;
            }
        }
        reports.push(evaluate_samples(&model, &samples)?);
    }
    let report: serde_json::Value = if reports.len() == 1 {
        print!("{}", reports[0].to_text());
        serde_json::to_value(&reports[0])?
    } else {
        let agg = MetricReport::aggregate(&reports, Vec::new())?;
        print!("{}", agg.to_text());
        serde_json::to_value(&agg)?
    };
    if let Some(out) = &common.out {
        let mut f = BufWriter::new(File::create(out)?);
        serde_json::to_writer_pretty(&mut f, &report)?;
        f.flush()?;
    }
    Ok(())
}

fn gradcheck_cmd(common: &Common, width: usize) -> Result<()> {
    let config = load_config(common)?;
    let check = GradcheckConfig {
        width,
        seed: common.seed.unwrap_or(0),
        weights: config.weights.clone(),
        ..GradcheckConfig::default()
    };
    let report = gradcheck(&check)?;
    let mut out = output(common.out.as_deref())?;
    for g in &report.groups {
        writeln!(
            out,
            "{:<36} {:>4} coords  rel {:.2e}  {}",
            g.name,
            g.coordinates,
            g.rel_error,
            if g.passed { "ok" } else { "FAIL" }
        )?;
    }
    writeln!(out, "max relative error {:.3e} (tolerance {:.0e})", report.max_rel_error, report.tolerance)?;
    out.flush()?;
    if !report.passed {
        bail!("gradient check failed for {}", report.failing().join(","));
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth { common } => synth(&common),
        Command::Gopfeat { common, corpus, view } => gopfeat(&common, &corpus, view),
        Command::Align { common, corpus } => align_cmd(&common, &corpus),
        Command::Train {
            common,
            corpus,
            curriculum,
            cono,
        } => train_cmd(&common, corpus.as_deref(), curriculum, cono),
        Command::Eval {
            common,
            checkpoint,
            corpus,
            view,
            dump_embeddings,
        } => eval_cmd(&common, &checkpoint, corpus.as_deref(), view, dump_embeddings.as_deref()),
        Command::Gradcheck { common, width } => gradcheck_cmd(&common, width),
    }
}

fn error_kind(err: &anyhow::Error) -> &'static str {
    err.chain()
        .find_map(|e| {
            e.downcast_ref::<hippo_core::Error>()
                .map(hippo_core::Error::kind)
                .or_else(|| e.downcast_ref::<io::Error>().map(|_| "io"))
                .or_else(|| e.downcast_ref::<serde_json::Error>().map(|_| "json"))
        })
        .unwrap_or("other")
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let message = format!("{err:#}").replace('\n', " ");
            eprintln!("{}", json!({"error": error_kind(&err), "message": message}));
            ExitCode::FAILURE
        }
    }
}

