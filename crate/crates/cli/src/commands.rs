use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use navsynth_core::generator::{
    pool_for_mode, FixtureRewriter, GenerateError, Generator, GeneratorConfig, HttpRewriter,
    IdentityRewriter, InstructionRecord, Mode, Rewriter,
};
use navsynth_core::grammar::{default_grammar, minimal_cover, Grammar, DEFAULT_GRAMMAR};
use navsynth_core::mapgraph::{load_bundle, validate_bundle, MapBundle};
use navsynth_core::metrics::{cdf_export, evaluate, landmark_baseline, write_cdf_csv, EvalPair, MetricsConfig};
use navsynth_core::stats::dataset_stats;
use navsynth_core::synth::{grid_city, CityConfig};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::io::{hash_bytes, hash_file, read_dataset, read_predictions};
use crate::{
    BaselineArg, Cli, Command, EvaluateArgs, GenerateArgs, GrammarArgs, GrammarCommand, MapArgs, RewriterSpec,
    StatsArgs, SynthArgs, EXIT_INVALID,
};

pub fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::ValidateMap(args) => validate_map(&args),
        Command::Generate(args) => generate(&args).map(|_| ExitCode::SUCCESS),
        Command::Stats(args) => stats(&args),
        Command::Evaluate(args) => evaluate_cmd(&args),
        Command::Grammar { action } => grammar(&action),
        Command::SynthCity(args) => synth_city(&args),
    }
}

fn validate_map(args: &MapArgs) -> Result<ExitCode> {
    let (bundle, diags) = validate_bundle(&args.entities, &args.streets);
    if diags.is_empty() {
        if let Some(b) = bundle {
            println!(
                "ok: {} entities, {} nodes, {} edges",
                b.entities().len(),
                b.graph().node_count(),
                b.graph().edge_count()
            );
        }
        return Ok(ExitCode::SUCCESS);
    }
    eprintln!("{}", serde_json::to_string_pretty(&diags)?);
    Ok(ExitCode::from(EXIT_INVALID))
}

fn load_map(entities: &Path, streets: &Path) -> Result<MapBundle> {
    load_bundle(entities, streets).map_err(|e| {
        let diags = serde_json::to_string(e.diagnostics()).unwrap_or_default();
        anyhow!("{e}\n{diags}")
    })
}

fn load_grammar(args: &GrammarArgs) -> Result<(Grammar, String)> {
    load_grammar_path(args.grammar.as_deref())
}

fn load_grammar_path(path: Option<&Path>) -> Result<(Grammar, String)> {
    match path {
        None => Ok((default_grammar(), DEFAULT_GRAMMAR.to_string())),
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("cannot read {}", p.display()))?;
            let grammar = Grammar::parse(&text).map_err(|e| anyhow!("{}: {e}", p.display()))?;
            Ok((grammar, text))
        }
    }
}

/// Template pool size recorded in the manifest; dummy mode has none.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PoolSize {
    Count(usize),
    NotApplicable(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestConfig {
    pub entities: PathBuf,
    pub streets: PathBuf,
    pub grammar: Option<PathBuf>,
    pub mode: Mode,
    pub n: u64,
    pub seed: u64,
    pub retries: u32,
    pub rewriter: String,
    pub jobs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerateManifest {
    pub version: String,
    pub config: ManifestConfig,
    pub entities_sha256: String,
    pub streets_sha256: String,
    pub grammar_sha256: String,
    pub template_pool: PoolSize,
    pub records: usize,
    pub misses: usize,
    pub missed_indices: Vec<u64>,
    pub wall_time_s: f64,
}

fn build_rewriter(spec: &RewriterSpec) -> Result<Box<dyn Rewriter>> {
    Ok(match spec {
        RewriterSpec::Identity => Box::new(IdentityRewriter),
        RewriterSpec::Fixture(path) => Box::new(
            FixtureRewriter::load(path).with_context(|| format!("cannot load fixture {}", path.display()))?,
        ),
        RewriterSpec::Http(url) => Box::new(HttpRewriter::from_env(url.clone())),
    })
}

fn generate(args: &GenerateArgs) -> Result<GenerateManifest> {
    let started = Instant::now();
    let mode: Mode = args.mode.into();
    let bundle = load_map(&args.map.entities, &args.map.streets)?;
    let (grammar, grammar_text) = load_grammar_path(args.grammar.as_deref())?;
    let pool = if mode.uses_templates() {
        let templates = grammar.enumerate().context("cannot enumerate grammar")?;
        pool_for_mode(mode, &templates)
    } else {
        None
    };
    let rewriter = build_rewriter(&args.rewriter)?;
    let mut config = GeneratorConfig::new(mode);
    config.retries = args.retries;
    let generator = Generator::new(&bundle, pool.as_ref(), config)?.with_rewriter(rewriter.as_ref());

    let jobs = args.jobs.unwrap_or(0);
    let workers = rayon::ThreadPoolBuilder::new().num_threads(jobs).build()?;
    let results: Vec<Result<InstructionRecord, GenerateError>> = workers.install(|| {
        (0..args.n)
            .into_par_iter()
            .map(|i| generator.generate_one(args.seed, i))
            .collect()
    });

    let mut out = BufWriter::new(
        File::create(&args.out).with_context(|| format!("cannot create {}", args.out.display()))?,
    );
    let mut missed = Vec::new();
    let mut written = 0;
    for (i, result) in results.into_iter().enumerate() {
        match result {
            Ok(record) => {
                serde_json::to_writer(&mut out, &record)?;
                out.write_all(b"\n")?;
                written += 1;
            }
            Err(GenerateError::Exhausted { index, attempts, last }) => {
                log::debug!("record {index} missed after {attempts} attempts: {last}");
                missed.push(i as u64);
            }
            Err(e) => return Err(anyhow!(e).context(format!("record {i}"))),
        }
    }
    out.flush()?;
    if !missed.is_empty() {
        log::warn!("{} of {} records missed after exhausting retries", missed.len(), args.n);
    }

    let manifest = GenerateManifest {
        version: env!("CARGO_PKG_VERSION").to_string(),
        config: ManifestConfig {
            entities: args.map.entities.clone(),
            streets: args.map.streets.clone(),
            grammar: args.grammar.clone(),
            mode,
            n: args.n,
            seed: args.seed,
            retries: args.retries,
            rewriter: args.rewriter.to_string(),
            jobs: workers.current_num_threads(),
        },
        entities_sha256: hash_file(&args.map.entities)?,
        streets_sha256: hash_file(&args.map.streets)?,
        grammar_sha256: hash_bytes(grammar_text.as_bytes()),
        template_pool: pool.as_ref().map_or(PoolSize::NotApplicable("n/a".into()), |p| PoolSize::Count(p.len())),
        records: written,
        misses: missed.len(),
        missed_indices: missed,
        wall_time_s: started.elapsed().as_secs_f64(),
    };
    let manifest_path = args.manifest.clone().unwrap_or_else(|| {
        let mut p = args.out.clone().into_os_string();
        p.push(".manifest.json");
        PathBuf::from(p)
    });
    fs::write(&manifest_path, serde_json::to_string_pretty(&manifest)? + "\n")
        .with_context(|| format!("cannot write {}", manifest_path.display()))?;
    println!("wrote {written} records to {} ({} missed)", args.out.display(), manifest.misses);
    Ok(manifest)
}

fn stats(args: &StatsArgs) -> Result<ExitCode> {
    let records = read_dataset(&args.dataset)?;
    let s = dataset_stats(records.iter().map(|r| (r.instruction.as_str(), r.entity_mentions())))?;
    println!("records          {}", s.records);
    println!("mean tokens      {:.2}", s.mean_tokens);
    println!("mean entities    {:.2}", s.mean_entities);
    println!("vocabulary size  {}", s.vocabulary_size);
    if let Some(path) = &args.csv_out {
        let csv = format!("{}\n{}\n", navsynth_core::stats::DatasetStats::csv_header(), s.csv_row());
        fs::write(path, csv).with_context(|| format!("cannot write {}", path.display()))?;
    }
    Ok(ExitCode::SUCCESS)
}

fn evaluate_cmd(args: &EvaluateArgs) -> Result<ExitCode> {
    let records = read_dataset(&args.dataset)?;
    let pairs: Vec<EvalPair> = match (&args.predictions, args.baseline) {
        (_, Some(BaselineArg::Landmark)) => {
            let (Some(entities), Some(streets)) = (&args.entities, &args.streets) else {
                bail!("--baseline needs --entities and --streets");
            };
            let bundle = load_map(entities, streets)?;
            records
                .iter()
                .map(|r| EvalPair { gold: r.goal, pred: landmark_baseline(&bundle, r.start).point })
                .collect()
        }
        (Some(path), None) => {
            let predictions = read_predictions(path)?;
            let gold: BTreeMap<&str, &InstructionRecord> = records.iter().map(|r| (r.id.as_str(), r)).collect();
            let unknown: BTreeSet<&str> = predictions
                .iter()
                .map(|p| p.id.as_str())
                .filter(|id| !gold.contains_key(id))
                .collect();
            if !unknown.is_empty() {
                let list: Vec<&str> = unknown.into_iter().collect();
                bail!("prediction ids not in dataset: {}", list.join(", "));
            }
            let covered: BTreeSet<&str> = predictions.iter().map(|p| p.id.as_str()).collect();
            if covered.len() < records.len() {
                log::warn!("{} dataset records have no prediction", records.len() - covered.len());
            }
            predictions
                .iter()
                .map(|p| EvalPair { gold: gold[p.id.as_str()].goal, pred: p.pred })
                .collect()
        }
        (None, None) => bail!("pass --predictions or --baseline"),
    };
    let config = MetricsConfig { radii: args.radii.clone(), ..MetricsConfig::default() };
    let report = evaluate(&pairs, &config)?;
    print!("{}", report.table());
    if let Some(path) = &args.report_out {
        fs::write(path, serde_json::to_string_pretty(&report)? + "\n")
            .with_context(|| format!("cannot write {}", path.display()))?;
    }
    if let Some(path) = &args.cdf_out {
        let points = cdf_export(&pairs, args.cdf_max, args.cdf_steps)?;
        let file = File::create(path).with_context(|| format!("cannot create {}", path.display()))?;
        let mut out = BufWriter::new(file);
        write_cdf_csv(&mut out, &points)?;
        out.flush()?;
    }
    Ok(ExitCode::SUCCESS)
}

fn grammar(action: &GrammarCommand) -> Result<ExitCode> {
    match action {
        GrammarCommand::Enumerate { grammar, dump } => {
            let (g, _) = load_grammar(grammar)?;
            let templates = g.enumerate()?;
            println!("{} templates", templates.len());
            if let Some(path) = dump {
                let mut out = BufWriter::new(File::create(path).with_context(|| format!("cannot create {}", path.display()))?);
                for t in &templates {
                    writeln!(out, "{}\t{t}", t.id())?;
                }
                out.flush()?;
            }
        }
        GrammarCommand::Minimal { grammar } => {
            let (g, _) = load_grammar(grammar)?;
            let cover = minimal_cover(&g.enumerate()?);
            for t in &cover {
                println!("{}\t{t}", t.id());
            }
            println!("cover size: {}", cover.len());
        }
        GrammarCommand::Lint { grammar } => {
            let (g, _) = match load_grammar(grammar) {
                Ok(loaded) => loaded,
                Err(e) => {
                    eprintln!("{e:#}");
                    return Ok(ExitCode::from(EXIT_INVALID));
                }
            };
            let findings = g.lint();
            for f in &findings {
                eprintln!("{f}");
            }
            if !findings.is_empty() {
                return Ok(ExitCode::from(EXIT_INVALID));
            }
            println!("ok: {} productions, {} templates", g.productions().len(), g.count_templates());
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn synth_city(args: &SynthArgs) -> Result<ExitCode> {
    let config = CityConfig {
        rows: args.rows,
        cols: args.cols,
        spacing_m: args.spacing,
        entities: args.count,
        seed: args.seed,
        ..CityConfig::default()
    };
    let bundle = grid_city(&config)?;
    bundle.write_files(&args.entities_out, &args.streets_out)?;
    println!(
        "wrote {} entities and {} street nodes",
        bundle.entities().len(),
        bundle.graph().node_count()
    );
    Ok(ExitCode::SUCCESS)
}
