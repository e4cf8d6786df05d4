use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use fignn::checkpoint::Checkpoint;
use fignn::explain::{self, ExplanationBundle};
use fignn::featurestore::{
    build_vocabulary, encode, encode_all, read_tsv, read_tsv_lenient, split_dataset, FieldSchema, RawRecord,
    Vocabulary,
};
use fignn::metrics::{self, EvalReport};
use fignn::model::{AblationConfig, Model, ModelKind};
use fignn::synthetic::XorTask;
use fignn::training::{self, TrainOutcome};
use fignn::Error;

use crate::config::RunConfig;
use crate::TrainArgs;

/// Some input lines could not be processed; the rest of the run went ahead.
#[derive(Debug)]
struct PartialFailure {
    failed: usize,
    total: usize,
}

impl std::fmt::Display for PartialFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} of {} lines could not be scored", self.failed, self.total)
    }
}

impl std::error::Error for PartialFailure {}

/// 0 ok, 1 data, 2 configuration, 3 internal invariant.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<Error>() {
            return match e {
                Error::Input(_) | Error::Io(_) | Error::Json(_) => 1,
                Error::Config(_) => 2,
                Error::Shape(_) | Error::NonFinite { .. } | Error::Invariant(_) => 3,
            };
        }
        if cause.downcast_ref::<PartialFailure>().is_some() || cause.downcast_ref::<std::io::Error>().is_some() {
            return 1;
        }
    }
    3
}

fn config_error(msg: impl Into<String>) -> anyhow::Error {
    Error::Config(msg.into()).into()
}

fn open(path: &Path) -> Result<BufReader<File>> {
    let f = File::open(path).map_err(Error::from).with_context(|| format!("opening {}", path.display()))?;
    Ok(BufReader::new(f))
}

fn read_schema(path: &Path) -> Result<FieldSchema> {
    let text = fs::read_to_string(path)
        .map_err(Error::from)
        .with_context(|| format!("reading {}", path.display()))?;
    FieldSchema::from_json(&text).with_context(|| format!("schema {}", path.display()))
}

fn read_vocab(path: &Path) -> Result<Vocabulary> {
    let text = fs::read_to_string(path)
        .map_err(Error::from)
        .with_context(|| format!("reading {}", path.display()))?;
    Vocabulary::from_json(&text).with_context(|| format!("vocabulary {}", path.display()))
}

fn read_records(path: &Path, m: usize) -> Result<Vec<RawRecord>> {
    read_tsv(open(path)?, m).with_context(|| format!("reading {}", path.display()))
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::load(path).with_context(|| format!("loading checkpoint {}", path.display()))
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents)
        .map_err(Error::from)
        .with_context(|| format!("writing {}", path.display()))
}

pub fn build_vocab(data: &Path, schema: &Path, min_count: u64, out: &Path) -> Result<()> {
    let schema = read_schema(schema)?;
    let records = read_records(data, schema.len())?;
    if records.is_empty() {
        return Err(Error::Input(format!("{} contains no records", data.display())).into());
    }
    let vocab = build_vocabulary(&records, &schema, min_count)?;
    write_file(out, vocab.to_json())?;
    println!(
        "{} records, {} features over {} fields -> {}",
        records.len(),
        vocab.total_feature_count,
        vocab.field_count(),
        out.display()
    );
    Ok(())
}

/// Run configuration with command-line overrides applied.
fn resolve_run(args: &TrainArgs) -> Result<RunConfig> {
    let mut cfg = match &args.config {
        Some(p) => RunConfig::load(p).with_context(|| format!("config {}", p.display()))?,
        None => RunConfig::default(),
    };
    macro_rules! set {
        ($src:expr => $dst:expr) => {
            if let Some(v) = $src.clone() {
                $dst = v;
            }
        };
    }
    if args.data.is_some() {
        cfg.data = args.data.clone();
    }
    if args.schema.is_some() {
        cfg.schema = args.schema.clone();
    }
    if args.vocab.is_some() {
        cfg.vocab = args.vocab.clone();
    }
    if args.out.is_some() {
        cfg.out = args.out.clone();
    }
    if args.history.is_some() {
        cfg.history = args.history.clone();
    }
    set!(args.min_count => cfg.min_count);
    set!(args.steps => cfg.model.steps);
    set!(args.state_dim => cfg.model.state_dim);
    set!(args.heads => cfg.model.heads);
    set!(args.epochs => cfg.training.max_epochs);
    set!(args.batch_size => cfg.training.batch_size);
    set!(args.learning_rate => cfg.training.learning_rate);
    set!(args.seed => cfg.training.seed);
    if let Some(kind) = &args.model {
        cfg.model.kind = kind.parse::<ModelKind>()?;
    }
    if let Some(list) = &args.ablation {
        cfg.model.ablation = AblationConfig::parse_list(list)?;
    }
    if cfg.model.kind != ModelKind::Fignn && cfg.model.ablation != AblationConfig::default() {
        return Err(config_error(format!("ablation flags apply to fignn only, not {}", cfg.model.kind)));
    }
    Ok(cfg)
}

struct Prepared {
    vocab: Vocabulary,
    split: fignn::featurestore::DatasetSplit,
}

fn prepare_data(cfg: &RunConfig) -> Result<Prepared> {
    let data = cfg.data.as_ref().ok_or_else(|| config_error("no training data given (--data or \"data\")"))?;
    let vocab = match (&cfg.vocab, &cfg.schema) {
        (Some(v), _) => Some(read_vocab(v)?),
        (None, Some(_)) => None,
        (None, None) => return Err(config_error("need a schema (--schema) or a vocabulary (--vocab)")),
    };
    let schema = match (&vocab, &cfg.schema) {
        (Some(v), _) => v.schema(),
        (None, Some(s)) => read_schema(s)?,
        (None, None) => unreachable!("checked above"),
    };
    let records = read_records(data, schema.len())?;
    let vocab = match vocab {
        Some(v) => v,
        None => build_vocabulary(&records, &schema, cfg.min_count)?,
    };
    let instances = encode_all(&records, &vocab)?;
    let split = split_dataset(instances, cfg.split_seed)?;
    log::info!(
        "{} features; split {}/{}/{}",
        vocab.total_feature_count,
        split.train.len(),
        split.validation.len(),
        split.test.len()
    );
    Ok(Prepared { vocab, split })
}

fn fit(cfg: &RunConfig, data: &Prepared) -> Result<TrainOutcome> {
    let model_cfg = cfg.model.resolve(data.vocab.field_count(), data.vocab.total_feature_count);
    let model = Model::new(model_cfg, cfg.training.seed)?;
    log::info!("{} model with {} parameters", model.config().kind, model.parameter_count());
    Ok(training::train(model, &data.split, &cfg.training)?)
}

pub fn train(args: &TrainArgs) -> Result<()> {
    let cfg = resolve_run(args)?;
    let data = prepare_data(&cfg)?;
    let outcome = fit(&cfg, &data)?;
    let out = cfg.out.clone().unwrap_or_else(|| PathBuf::from("model.ckpt"));
    let history = cfg.history.clone().unwrap_or_else(|| out.with_extension("history.csv"));
    let ckpt = Checkpoint::new(outcome.model, data.vocab)?;
    ckpt.save(&out).with_context(|| format!("writing {}", out.display()))?;
    write_file(&history, outcome.history.to_csv())?;

    let val = metrics::evaluate(&ckpt.model, &data.split.validation)?;
    let test = metrics::evaluate(&ckpt.model, &data.split.test)?;
    println!(
        "best epoch {} of {}",
        outcome.history.best_epoch,
        outcome.history.len()
    );
    println!("validation auc {:.6} logloss {:.6}", val.auc, val.logloss);
    println!("test       auc {:.6} logloss {:.6}", test.auc, test.logloss);
    println!("checkpoint {}", out.display());
    Ok(())
}

pub fn evaluate(checkpoint: &Path, data: &Path, vocab: Option<&Path>, json_only: bool) -> Result<()> {
    let ckpt = load_checkpoint(checkpoint)?;
    if let Some(v) = vocab {
        let expected = read_vocab(v)?.fingerprint();
        if expected != ckpt.vocabulary_hash() {
            return Err(config_error(format!(
                "vocabulary {} (sha256 {expected}) is not the one the checkpoint was trained with ({})",
                v.display(),
                ckpt.vocabulary_hash()
            )));
        }
    }
    let records = read_records(data, ckpt.vocabulary.field_count())?;
    let instances = encode_all(&records, &ckpt.vocabulary)?;
    let report = metrics::evaluate(&ckpt.model, &instances)?;
    if json_only {
        println!("{}", report.to_json());
    } else {
        print!("{}", report_table(&ckpt, &report));
        println!("{}", report.to_json());
    }
    Ok(())
}

fn report_table(ckpt: &Checkpoint, report: &EvalReport) -> String {
    let name = match ckpt.model.config().kind {
        ModelKind::Fignn => ckpt.model.config().ablation.label(),
        other => other.to_string().to_uppercase(),
    };
    let rows = metrics::comparison_table(&[(name.clone(), report.clone())], &name).expect("single row");
    let mut s = metrics::format_table(&rows);
    let _ = writeln!(s, "instances: {}", report.n_instances);
    s
}

pub fn predict(checkpoint: &Path, data: &Path, out: Option<&Path>) -> Result<()> {
    let ckpt = load_checkpoint(checkpoint)?;
    let lines = read_tsv_lenient(open(data)?, ckpt.vocabulary.field_count())?;
    let mut sink: Box<dyn Write> = match out {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).map_err(Error::from).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => Box::new(std::io::stdout().lock()),
    };
    let mut failed = 0;
    for (line_no, parsed) in &lines {
        let scored = parsed
            .as_ref()
            .map_err(|e| anyhow!("{e}"))
            .and_then(|rec| Ok(encode(rec, &ckpt.vocabulary)?))
            .and_then(|inst| Ok(ckpt.model.predict(&inst)?));
        match scored {
            Ok(p) => writeln!(sink, "{line_no},{}", p.probability).map_err(Error::from)?,
            Err(e) => {
                failed += 1;
                eprintln!("line {line_no}: {e}");
            }
        }
    }
    sink.flush().map_err(Error::from)?;
    if failed > 0 {
        return Err(PartialFailure {
            failed,
            total: lines.len(),
        }
        .into());
    }
    Ok(())
}

pub fn explain(checkpoint: &Path, data: &Path, case_mode: bool, cases: usize, out_dir: &Path) -> Result<()> {
    let ckpt = load_checkpoint(checkpoint)?;
    let m = ckpt.vocabulary.field_count();
    let mut instances = Vec::new();
    for (line_no, parsed) in read_tsv_lenient(open(data)?, m)? {
        let rec = parsed.map_err(|e| Error::Input(format!("line {line_no}: {e}")))?;
        instances.push(encode(&rec, &ckpt.vocabulary).map_err(|e| Error::Input(format!("line {line_no}: {e}")))?);
    }
    let names = ckpt.vocabulary.field_names();
    let bundle = explain::explain(&ckpt.model, &instances, &names, if case_mode { cases } else { 0 })?;
    fs::create_dir_all(out_dir)
        .map_err(Error::from)
        .with_context(|| format!("creating {}", out_dir.display()))?;
    write_bundle(&bundle, out_dir)?;
    println!(
        "explained {} instances ({} individually) -> {}",
        bundle.instances,
        bundle.cases.len(),
        out_dir.display()
    );
    Ok(())
}

fn write_bundle(bundle: &ExplanationBundle, dir: &Path) -> Result<()> {
    write_file(
        &dir.join("edge_heatmap.csv"),
        explain::matrix_csv(&bundle.field_names, &bundle.edge_heatmap),
    )?;
    write_file(&dir.join("node_weights.csv"), explain::node_weights_csv(bundle))?;
    for case in &bundle.cases {
        write_file(
            &dir.join(format!("case{}_edges.csv", case.index)),
            explain::matrix_csv(&bundle.field_names, &case.adjacency),
        )?;
    }
    write_file(
        &dir.join("explanation.json"),
        serde_json::to_string_pretty(bundle).map_err(Error::from)? + "\n",
    )
}

pub fn sweep(
    base: &TrainArgs,
    steps: &[usize],
    state_dims: &[usize],
    heads: &[usize],
    report: Option<&Path>,
) -> Result<()> {
    let cfg = resolve_run(base)?;
    if cfg.model.kind != ModelKind::Fignn {
        return Err(config_error("sweeps vary fignn hyper-parameters; use --model fignn"));
    }
    let or_base = |grid: &[usize], v: usize| if grid.is_empty() { vec![v] } else { grid.to_vec() };
    let (steps, dims, heads) = (
        or_base(steps, cfg.model.steps),
        or_base(state_dims, cfg.model.state_dim),
        or_base(heads, cfg.model.heads),
    );
    let data = prepare_data(&cfg)?;
    let mut csv = String::from("steps,state_dim,heads,val_auc,val_logloss,test_auc,test_logloss\n");
    println!(
        "{:>5}  {:>9}  {:>5}  {:>8}  {:>11}  {:>8}  {:>12}",
        "T", "state_dim", "heads", "val_auc", "val_logloss", "test_auc", "test_logloss"
    );
    for &t in &steps {
        for &d in &dims {
            for &h in &heads {
                let mut run = cfg.clone();
                run.model.steps = t;
                run.model.state_dim = d;
                run.model.heads = h;
                let outcome = fit(&run, &data)?;
                let val = metrics::evaluate(&outcome.model, &data.split.validation)?;
                let test = metrics::evaluate(&outcome.model, &data.split.test)?;
                println!(
                    "{t:>5}  {d:>9}  {h:>5}  {:>8.5}  {:>11.5}  {:>8.5}  {:>12.5}",
                    val.auc, val.logloss, test.auc, test.logloss
                );
                let _ = writeln!(
                    csv,
                    "{t},{d},{h},{},{},{},{}",
                    val.auc, val.logloss, test.auc, test.logloss
                );
            }
        }
    }
    if let Some(path) = report {
        write_file(path, csv)?;
    }
    Ok(())
}

pub fn generate_synthetic(out: &Path, schema_out: &Path, instances: usize, noise: f64, seed: u64) -> Result<()> {
    if instances == 0 {
        bail!(Error::Config("--instances must be positive".into()));
    }
    let task = XorTask {
        instances,
        noise,
        seed,
        ..XorTask::default()
    };
    let data = task.generate()?;
    let mut tsv = String::new();
    for r in &data.records {
        let _ = writeln!(tsv, "{}\t{}", r.label, r.values.join("\t"));
    }
    write_file(out, tsv)?;
    write_file(schema_out, data.schema.to_json())?;
    println!("{} instances -> {}", instances, out.display());
    Ok(())
}
