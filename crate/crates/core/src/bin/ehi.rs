use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use ehi::data::{load_qrels, EmbeddingMatrix};
use ehi::evaluator::{curve, curve_csv, evaluate, MetricName};
use ehi::gradcheck;
use ehi::synth::{generate, SynthConfig};
use ehi::trainer::TrainData;
use ehi::{Error, IndexArtifact, IndexKind, TrainConfig};

#[derive(Parser)]
#[command(
    name = "ehi",
    version,
    about = "Jointly trained tree index for dense retrieval"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train an index and write it with its training log.
    Train(TrainArgs),
    /// Rebuild the leaf map of a trained index, optionally over new documents.
    BuildIndex(BuildArgs),
    /// Search and print query-id, rank, doc-id, score as TSV.
    Search(SearchArgs),
    /// Mean metrics at one beam width as CSV.
    Eval(EvalArgs),
    /// Metric vs. visited fraction over several beam widths as CSV.
    Curve(CurveArgs),
    /// Check analytic training gradients against finite differences.
    Gradcheck(GradcheckArgs),
    /// Write a synthetic clustered corpus.
    Synth(SynthArgs),
}

#[derive(Args)]
struct TrainArgs {
    /// `key = value` config file; keys are the training config field names.
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    docs: PathBuf,
    #[arg(long)]
    queries: PathBuf,
    #[arg(long)]
    qrels: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Per-epoch CSV; defaults to `<out>.log.csv`.
    #[arg(long)]
    log: Option<PathBuf>,
    #[arg(long, default_value = "ehi")]
    kind: IndexKind,
}

#[derive(Args)]
struct BuildArgs {
    #[arg(long)]
    index: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Documents to index; defaults to the corpus stored in the index.
    #[arg(long)]
    docs: Option<PathBuf>,
    /// Leaves per document; defaults to the stored value.
    #[arg(long)]
    d2l: Option<usize>,
}

#[derive(Args)]
struct SearchArgs {
    #[arg(long)]
    index: PathBuf,
    #[arg(long)]
    queries: PathBuf,
    #[arg(long, default_value_t = 1)]
    beam: usize,
    #[arg(long, default_value_t = 10)]
    k: usize,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    index: PathBuf,
    #[arg(long)]
    queries: PathBuf,
    #[arg(long)]
    qrels: PathBuf,
    #[arg(long, default_value_t = 1)]
    beam: usize,
    #[arg(long, default_value_t = 10)]
    k: usize,
}

#[derive(Args)]
struct CurveArgs {
    #[arg(long)]
    index: PathBuf,
    #[arg(long)]
    queries: PathBuf,
    #[arg(long)]
    qrels: PathBuf,
    /// Comma-separated beam widths; defaults to powers of two up to the leaf count.
    #[arg(long, value_delimiter = ',')]
    beams: Vec<usize>,
    #[arg(long, default_value_t = 10)]
    k: usize,
    #[arg(long, default_value = "recall")]
    metric: MetricName,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = gradcheck::FD_EPS)]
    eps: f64,
    /// Print every coordinate, not just the summary.
    #[arg(long)]
    verbose: bool,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 2048)]
    docs: usize,
    #[arg(long, default_value_t = 32)]
    clusters: usize,
    #[arg(long, default_value_t = 16)]
    dim: usize,
    #[arg(long, default_value_t = 512)]
    train_queries: usize,
    #[arg(long, default_value_t = 256)]
    test_queries: usize,
    /// Standard deviation of documents around their cluster center.
    #[arg(long, default_value_t = SynthConfig::default().cluster_spread)]
    spread: f64,
    /// Standard deviation of queries around their source document.
    #[arg(long, default_value_t = SynthConfig::default().query_noise)]
    noise: f64,
}

enum Failure {
    /// Bad input, config, or IO.
    Input(String),
    /// Training diverged.
    Numeric(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::NonFiniteLoss { .. } | Error::NonFiniteGradient(_) => {
                Failure::Numeric(e.to_string())
            }
            _ => Failure::Input(e.to_string()),
        }
    }
}

type CmdResult = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => cmd_train(a),
        Command::BuildIndex(a) => cmd_build(a),
        Command::Search(a) => cmd_search(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Curve(a) => cmd_curve(a),
        Command::Gradcheck(a) => cmd_gradcheck(a),
        Command::Synth(a) => cmd_synth(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Input(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Numeric(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

fn load_config(path: &Path) -> Result<TrainConfig, Failure> {
    let mut cfg = TrainConfig::load(path)?;
    if let Ok(seed) = std::env::var("EHI_SEED") {
        cfg.seed = seed
            .trim()
            .parse()
            .map_err(|_| Failure::Input(format!("EHI_SEED: not an integer: {seed:?}")))?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn load_queries(path: &Path) -> Result<EmbeddingMatrix, Failure> {
    let q = EmbeddingMatrix::load(path)?;
    if q.count() == 0 {
        return Err(Failure::Input(format!("{}: no queries", path.display())));
    }
    Ok(q)
}

fn write_file(path: &Path, bytes: &[u8]) -> CmdResult {
    std::fs::write(path, bytes).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))
}

fn write_stdout(text: &str) -> CmdResult {
    std::io::stdout()
        .lock()
        .write_all(text.as_bytes())
        .map_err(|e| Failure::Input(format!("stdout: {e}")))
}

fn cmd_train(a: TrainArgs) -> CmdResult {
    let cfg = load_config(&a.config)?;
    let docs = EmbeddingMatrix::load(&a.docs)?;
    let queries = EmbeddingMatrix::load(&a.queries)?;
    let judgments = load_qrels(&a.qrels)?;
    let data = TrainData {
        queries: &queries,
        docs: &docs,
        judgments: &judgments,
    };
    let (artifact, log) = IndexArtifact::train(a.kind, &data, &cfg)?;
    artifact.save(&a.out)?;
    let log_path = a.log.unwrap_or_else(|| {
        let mut p = a.out.clone().into_os_string();
        p.push(".log.csv");
        p.into()
    });
    write_file(&log_path, log.to_csv().as_bytes())?;
    eprintln!(
        "trained {} index: {} docs, {} leaves, {} epochs",
        a.kind,
        artifact.index.num_docs(),
        artifact.index.max_beam(),
        cfg.epochs
    );
    Ok(())
}

fn cmd_build(a: BuildArgs) -> CmdResult {
    let art = IndexArtifact::load(&a.index)?;
    let docs = match &a.docs {
        Some(p) => EmbeddingMatrix::load(p)?,
        None => art.index.docs.clone(),
    };
    let d2l = a.d2l.unwrap_or(art.index.leaf_map.d2l());
    art.reindex(docs, d2l)?.save(&a.out)?;
    Ok(())
}

fn cmd_search(a: SearchArgs) -> CmdResult {
    let art = IndexArtifact::load(&a.index)?;
    let queries = load_queries(&a.queries)?;
    let mut out = String::new();
    for i in 0..queries.count() {
        let res = art.index.search(queries.row(i), a.beam, a.k)?;
        for (rank, (d, score)) in res.hits.iter().enumerate() {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\n",
                queries.id(i),
                rank + 1,
                art.index.doc_id(*d),
                score
            ));
        }
    }
    write_stdout(&out)
}

fn cmd_eval(a: EvalArgs) -> CmdResult {
    let art = IndexArtifact::load(&a.index)?;
    let queries = load_queries(&a.queries)?;
    let qrels = load_qrels(&a.qrels)?;
    let summary = evaluate(&art.index, &queries, &qrels, a.beam, a.k)?;
    write_stdout(&curve_csv(&summary.points()))
}

fn cmd_curve(a: CurveArgs) -> CmdResult {
    let art = IndexArtifact::load(&a.index)?;
    let queries = load_queries(&a.queries)?;
    let qrels = load_qrels(&a.qrels)?;
    let beams = if a.beams.is_empty() {
        let max = art.index.max_beam();
        let mut b: Vec<usize> = std::iter::successors(Some(1usize), |&x| x.checked_mul(2))
            .take_while(|&x| x < max)
            .collect();
        b.push(max);
        b
    } else {
        a.beams
    };
    let points = curve(&art.index, &queries, &qrels, &beams, a.k, a.metric)?;
    write_stdout(&curve_csv(&points))
}

fn cmd_gradcheck(a: GradcheckArgs) -> CmdResult {
    let inst = gradcheck::GradCheckInstance::standard(a.seed)?;
    let report = gradcheck::run(&inst, a.eps)?;
    let mut out = String::new();
    if a.verbose {
        for (name, err) in &report.per_param_errors {
            out.push_str(&format!("{name}\t{err:e}\n"));
        }
    }
    let worst = report
        .worst()
        .map_or_else(|| "-".to_string(), |(n, e)| format!("{n} ({e:e})"));
    out.push_str(&format!(
        "checked {} coordinates, excluded {}\nmax relative error {:e}, worst {worst}\n",
        report.per_param_errors.len(),
        report.excluded.len(),
        report.max_rel_error
    ));
    write_stdout(&out)?;
    if report.max_rel_error >= 1e-3 {
        return Err(Failure::Numeric("gradient check failed".into()));
    }
    Ok(())
}

fn cmd_synth(a: SynthArgs) -> CmdResult {
    let cfg = SynthConfig {
        docs: a.docs,
        clusters: a.clusters,
        dim: a.dim,
        train_queries: a.train_queries,
        test_queries: a.test_queries,
        cluster_spread: a.spread,
        query_noise: a.noise,
        seed: a.seed,
        ..SynthConfig::default()
    };
    generate(&cfg)?.write_to(&a.out)?;
    Ok(())
}
