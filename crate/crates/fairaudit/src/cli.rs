//! Command-line interface. Exit codes: 0 success, 2 invalid configuration or
//! input, 3 transport exhaustion (every generation request failed).

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::charts;
use crate::config::{CohortConfig, ModelConfig, RunConfig};
use crate::consensus;
use crate::corpus::{self, Axis, Corpus};
use crate::error::{AuditError, Result};
use crate::gateway::{self, MockProfile, MockTransport, RecordStatus, Transport};
use crate::persona::{self, FirstNameTable, PatronType, SurnameTable, SyntheticPatron};
use crate::query;
use crate::stats::{self, CvConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 2;
pub const EXIT_TRANSPORT: i32 = 3;

#[derive(Parser, Debug)]
#[command(
    name = "fairaudit",
    version,
    about = "Fairness audit for LLM-backed library reference services"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Sample a demographically balanced synthetic patron cohort.
    Synthesize {
        #[arg(long)]
        config: PathBuf,
        /// Output JSONL path for the cohort.
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate the response corpus for the configured model.
    Generate {
        #[arg(long)]
        config: PathBuf,
        /// Cohort JSONL produced by `synthesize`.
        #[arg(long)]
        cohort: PathBuf,
        /// Output directory (corpus.jsonl, corpus_manifest.json, balance.csv).
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Phase one: cross-validated demographic-leakage verdicts.
    Audit {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Phase two: term-level salience for each demographic axis.
    Explain {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Cross-model consensus over two or more audited corpora.
    Consensus {
        /// Demographic axis: sex, race, or patron_type.
        #[arg(long)]
        axis: String,
        /// Corpus JSONL files, one per model (repeatable).
        #[arg(long = "corpus", required = true)]
        corpora: Vec<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
        /// Vocabulary-size override for the salience fits.
        #[arg(long)]
        vocab_k: Option<usize>,
    },
    /// Bundle every artifact in a directory into a self-contained index.html.
    Report {
        #[arg(long)]
        dir: PathBuf,
    },
    /// Full pipeline: synthesize, generate, audit, explain, report.
    All {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
}

/// Runs a parsed command and maps errors to exit codes.
pub fn run(cli: Cli) -> i32 {
    match dispatch(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code_for(&e)
        }
    }
}

/// Parses arguments and runs; suitable for both main() and tests.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    match Cli::try_parse_from(args) {
        Ok(cli) => run(cli),
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_INVALID,
            };
            let _ = e.print();
            code
        }
    }
}

fn exit_code_for(error: &AuditError) -> i32 {
    match error {
        AuditError::Transport(_) => EXIT_TRANSPORT,
        AuditError::Ingest { .. }
        | AuditError::Schema(_)
        | AuditError::Config(_)
        | AuditError::Template(_)
        | AuditError::UnsatisfiableTarget(_)
        | AuditError::CohortSize(_)
        | AuditError::Corpus(_)
        | AuditError::Input(_) => EXIT_INVALID,
        _ => 1,
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Synthesize { config, out } => {
            let config = RunConfig::load(config)?;
            cmd_synthesize(&config, &out)
        }
        Command::Generate {
            config,
            cohort,
            out_dir,
        } => {
            let config = RunConfig::load(config)?;
            cmd_generate(&config, &cohort, &out_dir)
        }
        Command::Audit {
            config,
            corpus,
            out_dir,
        } => {
            let config = RunConfig::load(config)?;
            let corpus = load_corpus(&corpus)?;
            cmd_audit(&config, &corpus, &out_dir)
        }
        Command::Explain {
            config,
            corpus,
            out_dir,
        } => {
            let config = RunConfig::load(config)?;
            let corpus = load_corpus(&corpus)?;
            cmd_explain(&config, &corpus, &out_dir)
        }
        Command::Consensus {
            axis,
            corpora,
            out_dir,
            vocab_k,
        } => cmd_consensus(&axis, &corpora, &out_dir, vocab_k),
        Command::Report { dir } => cmd_report(&dir),
        Command::All { config, out_dir } => {
            let config = RunConfig::load(config)?;
            cmd_all(&config, &out_dir)
        }
    }
}

/// Bundled demonstration name data, used when the config names no files.
fn bundled_tables() -> Result<(FirstNameTable, SurnameTable)> {
    let first_names = persona::ingest_ssa_str(&[
        ("data/yob1990_sample.txt", include_str!("../data/yob1990_sample.txt")),
        ("data/yob2000_sample.txt", include_str!("../data/yob2000_sample.txt")),
    ])?;
    let surnames = persona::parse_census(
        include_str!("../data/census_surnames_sample.csv"),
        "data/census_surnames_sample.csv",
    )?;
    Ok((first_names, surnames))
}

fn load_tables(cohort: &CohortConfig) -> Result<(FirstNameTable, SurnameTable)> {
    let (bundled_first, bundled_sur) = bundled_tables()?;
    let first_names = match &cohort.ssa_dir {
        Some(dir) => persona::ingest_ssa_dir(dir)?,
        None => bundled_first,
    };
    let surnames = match &cohort.census_file {
        Some(path) => persona::ingest_census(path)?,
        None => bundled_sur,
    };
    Ok((first_names, surnames))
}

fn read_cohort(path: &Path) -> Result<Vec<SyntheticPatron>> {
    let content = std::fs::read_to_string(path)?;
    content
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(AuditError::from))
        .collect()
}

fn load_corpus(path: &Path) -> Result<Corpus> {
    corpus::finalize(corpus::read_jsonl(path)?)
}

fn make_transport(model: &ModelConfig, timeout_secs: u64) -> Result<Box<dyn Transport>> {
    if let Some(profile) = &model.mock_profile {
        let profile = MockProfile::parse(profile)
            .ok_or_else(|| AuditError::Config(format!("unknown mock_profile `{profile}`")))?;
        return Ok(Box::new(MockTransport::new(profile, model.mock_seed)));
    }
    let endpoint = model
        .endpoint
        .as_ref()
        .ok_or_else(|| AuditError::Config("model has neither endpoint nor mock_profile".into()))?;
    let api_key = model
        .api_key_env
        .as_ref()
        .map(|var| {
            std::env::var(var)
                .map_err(|_| AuditError::Config(format!("api_key_env `{var}` is not set")))
        })
        .transpose()?;
    Ok(Box::new(gateway::HttpTransport::new(
        endpoint,
        api_key,
        timeout_secs,
    )?))
}

fn cmd_synthesize(config: &RunConfig, out: &Path) -> Result<()> {
    config.validate()?;
    let (first_names, surnames) = load_tables(&config.cohort)?;
    let cohort = persona::build_cohort(
        &first_names,
        &surnames,
        config.cohort.size,
        config.cohort.seed,
    )?;
    if let Some(parent) = out.parent() {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(out, persona::cohort_to_jsonl(&cohort)?)?;
    println!("wrote cohort of {} patrons to {}", cohort.len(), out.display());
    Ok(())
}

/// One query per cohort member, cycling the cohort when the configured batch
/// size exceeds it.
fn batch_patrons(cohort: &[SyntheticPatron], per_seed_count: usize) -> Vec<SyntheticPatron> {
    cohort.iter().cycle().take(per_seed_count).cloned().collect()
}

fn generate_corpus(config: &RunConfig, cohort: &[SyntheticPatron]) -> Result<Corpus> {
    if cohort.is_empty() {
        return Err(AuditError::Input("cohort is empty".into()));
    }
    let transport = make_transport(&config.model, config.generation.timeout_secs)?;
    let roster = query::bundled_roster();
    let patrons = batch_patrons(cohort, config.generation.per_seed_count);
    let records = gateway::run_campaign(
        |seed| query::build_batch(&patrons, &roster, seed),
        &config.generation,
        &config.model.id,
        transport.as_ref(),
    )?;
    if records.iter().all(|r| r.status == RecordStatus::FailedPlaceholder) {
        let last = records
            .iter()
            .rev()
            .find_map(|r| r.error.clone())
            .unwrap_or_else(|| "no responses".into());
        return Err(AuditError::Transport(format!(
            "every generation request failed; last error: {last}"
        )));
    }
    corpus::finalize(records)
}

fn cmd_generate(config: &RunConfig, cohort_path: &Path, out_dir: &Path) -> Result<()> {
    config.validate()?;
    let cohort = read_cohort(cohort_path)?;
    let corpus = generate_corpus(config, &cohort)?;
    write_corpus_artifacts(config, &corpus, out_dir)?;
    println!(
        "wrote corpus of {} responses to {}",
        corpus.records.len(),
        out_dir.join("corpus.jsonl").display()
    );
    Ok(())
}

fn write_corpus_artifacts(config: &RunConfig, corpus: &Corpus, out_dir: &Path) -> Result<()> {
    std::fs::create_dir_all(out_dir)?;
    corpus::write_jsonl(&corpus.records, out_dir.join("corpus.jsonl"))?;
    corpus::write_manifest(corpus, &config.hash(), out_dir.join("corpus_manifest.json"))?;
    let reports: Vec<_> = Axis::ALL
        .iter()
        .map(|&axis| corpus::balance(corpus, axis))
        .collect::<Result<_>>()?;
    std::fs::write(out_dir.join("balance.csv"), corpus::balance_csv(&reports))?;
    Ok(())
}

fn cmd_audit(config: &RunConfig, corpus: &Corpus, out_dir: &Path) -> Result<()> {
    config.validate()?;
    let cv = CvConfig {
        alpha: config.audit.alpha,
        test_family_size: config.audit.test_family_size,
        vocab_k: config.audit.vocab_k,
        seed: config.audit.seed,
    };
    let verdicts = stats::audit_all_axes(corpus, &cv)?;
    std::fs::create_dir_all(out_dir.join("charts"))?;
    std::fs::write(out_dir.join("verdicts.csv"), stats::verdicts_csv(&verdicts))?;
    std::fs::write(
        out_dir.join("charts").join("margins.svg"),
        charts::margin_chart(&verdicts),
    )?;
    for v in &verdicts {
        println!(
            "{}/{}: mean accuracy {:.4} vs chance {:.4}, p={:.3e}, leakage={}",
            v.axis.name(),
            v.classifier.name(),
            v.mean_accuracy,
            v.chance_level,
            v.p_value,
            v.leakage_detected
        );
    }
    Ok(())
}

/// Mean response length per patron type, in [`PatronType::ALL`] order but
/// without the reference class; feeds the accommodation radar chart.
fn patron_type_word_means(corpus: &Corpus) -> (Vec<String>, Vec<f64>) {
    let reference = stats::reference_label(Axis::PatronType);
    let mut sums: BTreeMap<&str, (f64, usize)> = BTreeMap::new();
    for record in &corpus.records {
        let label = record.query.patron.patron_type.label();
        let entry = sums.entry(label).or_insert((0.0, 0));
        entry.0 += record.word_count as f64;
        entry.1 += 1;
    }
    let mut labels = Vec::new();
    let mut values = Vec::new();
    for patron_type in PatronType::ALL {
        let label = patron_type.label();
        if label == reference {
            continue;
        }
        if let Some(&(sum, n)) = sums.get(label) {
            labels.push(label.to_string());
            values.push(sum / n as f64);
        }
    }
    (labels, values)
}

fn cmd_explain(config: &RunConfig, corpus: &Corpus, out_dir: &Path) -> Result<()> {
    config.validate()?;
    std::fs::create_dir_all(out_dir.join("charts"))?;
    for axis in Axis::ALL {
        let report = stats::detect_salient(corpus, axis, config.audit.vocab_k)?;
        std::fs::write(
            out_dir.join(format!("salience_{}.csv", axis.name())),
            stats::salience_csv(&report),
        )?;
        std::fs::write(
            out_dir.join("charts").join(format!("volcano_{}.svg", axis.name())),
            charts::volcano_chart(&report),
        )?;
        if axis == Axis::Sex {
            std::fs::write(
                out_dir.join("vocabulary.txt"),
                crate::features::vocabulary_to_text(&report.vocabulary),
            )?;
        }
        let passing = report.terms.iter().filter(|t| t.passes).count();
        println!(
            "{}: {} of {} coefficients salient (alpha/test = {:.3e})",
            axis.name(),
            passing,
            report.terms.len(),
            report.alpha_per_test
        );
    }
    let (labels, values) = patron_type_word_means(corpus);
    std::fs::write(
        out_dir.join("charts").join("radar_patron_type.svg"),
        charts::radar_chart("Mean response length by patron type", &labels, &values),
    )?;
    Ok(())
}

fn parse_axis(name: &str) -> Result<Axis> {
    Axis::ALL
        .iter()
        .copied()
        .find(|a| a.name() == name)
        .ok_or_else(|| {
            AuditError::Input(format!(
                "unknown axis `{name}`; expected sex, race, or patron_type"
            ))
        })
}

fn cmd_consensus(
    axis_name: &str,
    corpora: &[PathBuf],
    out_dir: &Path,
    vocab_k: Option<usize>,
) -> Result<()> {
    let axis = parse_axis(axis_name)?;
    if corpora.len() < 2 {
        return Err(AuditError::Input(
            "consensus needs at least two corpora".into(),
        ));
    }
    let mut reports = Vec::new();
    for path in corpora {
        let corpus = load_corpus(path)?;
        let report = stats::detect_salient(&corpus, axis, vocab_k)?;
        reports.push((corpus.model_id.clone(), report));
    }
    let matrix = consensus::consensus_matrix(&reports)?;
    std::fs::create_dir_all(out_dir.join("charts"))?;
    std::fs::write(
        out_dir.join("consensus_matrix.csv"),
        consensus::consensus_csv(&matrix),
    )?;
    let merges = consensus::ward_cluster(&matrix.normalized);
    std::fs::write(out_dir.join("merges.csv"), consensus::merges_csv(&merges))?;
    let cells = consensus::aggregate(&reports)?;
    std::fs::write(
        out_dir.join("aggregation.csv"),
        consensus::aggregation_csv(&cells),
    )?;
    std::fs::write(
        out_dir.join("charts").join(format!("heatmap_{}.svg", axis.name())),
        charts::heatmap_chart(&matrix),
    )?;
    if matrix.empty {
        println!("no term is salient in two or more models");
    } else {
        println!(
            "{} consensus terms across {} models",
            matrix.terms.len(),
            matrix.models.len()
        );
    }
    Ok(())
}

fn cmd_report(dir: &Path) -> Result<()> {
    let html = build_report_html(dir)?;
    std::fs::write(dir.join("index.html"), html)?;
    println!("wrote {}", dir.join("index.html").display());
    Ok(())
}

/// Inlines every chart SVG and lists the CSV/JSON artifacts so the report
/// renders without any external files.
fn build_report_html(dir: &Path) -> Result<String> {
    let mut html = String::from(
        "<!DOCTYPE html>\n<html lang=\"en\">\n<head>\n<meta charset=\"utf-8\">\n\
         <title>Fairness audit report</title>\n\
         <style>body{font-family:sans-serif;max-width:900px;margin:2em auto;}\
         figure{margin:2em 0;}table{border-collapse:collapse;}\
         td,th{border:1px solid #ccc;padding:4px 8px;}</style>\n\
         </head>\n<body>\n<h1>Fairness audit report</h1>\n",
    );

    let charts_dir = dir.join("charts");
    let mut svgs: Vec<PathBuf> = if charts_dir.is_dir() {
        std::fs::read_dir(&charts_dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|ext| ext == "svg"))
            .collect()
    } else {
        Vec::new()
    };
    svgs.sort();
    for path in &svgs {
        let name = path.file_stem().unwrap_or_default().to_string_lossy();
        html.push_str(&format!("<figure>\n<h2>{name}</h2>\n"));
        html.push_str(&std::fs::read_to_string(path)?);
        html.push_str("</figure>\n");
    }

    let mut artifacts: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .is_some_and(|ext| ext == "csv" || ext == "json" || ext == "txt")
        })
        .collect();
    artifacts.sort();
    if !artifacts.is_empty() {
        html.push_str("<h2>Data artifacts</h2>\n<ul>\n");
        for path in &artifacts {
            let name = path.file_name().unwrap_or_default().to_string_lossy();
            html.push_str(&format!("<li>{name}</li>\n"));
        }
        html.push_str("</ul>\n");
    }
    if svgs.is_empty() && artifacts.is_empty() {
        return Err(AuditError::Input(format!(
            "{} holds no report artifacts",
            dir.display()
        )));
    }
    html.push_str("</body>\n</html>\n");
    Ok(html)
}

fn cmd_all(config: &RunConfig, out_dir: &Path) -> Result<()> {
    config.validate()?;
    std::fs::create_dir_all(out_dir)?;
    let cohort_path = out_dir.join("cohort.jsonl");
    cmd_synthesize(config, &cohort_path)?;
    let cohort = read_cohort(&cohort_path)?;
    let corpus = generate_corpus(config, &cohort)?;
    write_corpus_artifacts(config, &corpus, out_dir)?;
    cmd_audit(config, &corpus, out_dir)?;
    cmd_explain(config, &corpus, out_dir)?;
    cmd_report(out_dir)?;
    Ok(())
}
