//! Command-line front end: pair generation, scoring, evaluation, report
//! comparison and format validation.
//!
//! Every command takes the same flag set. A JSON file given with `--config`
//! supplies values for flags that are not on the command line.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use crate::archive::{text_key, EmbeddingArchive};
use crate::dataset::{
    generate_default_splits, load_annotations, load_splits_dir, load_taxonomy, Annotations,
    HoiTaxonomy, SplitDefinition, SplitFile, SplitName,
};
use crate::error::{Error, Result};
use crate::evaluation::{self, compare_reports, render_table, EvalReport, DEFAULT_IOU_THRESHOLD};
use crate::jsonl;
use crate::pairing::{
    pairs_from_annotations, pairs_from_detections, read_detection_boxes, read_pairs, write_pairs,
    CandidatePair, DetectionBox, PairingParams, Regime,
};
use crate::scoring::{
    read_detections, run_scoring, CandidateMode, MissingPolicy, ScoringParams, DEFAULT_LOGIT_SCALE,
};
use crate::synth::{self, SynthConfig};

#[derive(Debug, Parser)]
#[command(name = "hoi-eval", version, about = "Training-free HOI scoring and HICO-DET style mAP evaluation")]
pub struct Cli {
    /// JSON file with default values for any of the run flags.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build candidate (human, object) pairs for a regime.
    Pairs(RunArgs),
    /// Score pairs against prompt embeddings and write HOI detections.
    Score(RunArgs),
    /// Evaluate detections: report JSON to --out, table to stdout.
    Eval(RunArgs),
    /// Side-by-side table of two or more reports with deltas against the first.
    Compare(CompareArgs),
    /// Check the format of every file given.
    Validate(RunArgs),
    /// Write the generated split files for a taxonomy into --out.
    Splits(RunArgs),
    /// Write a synthetic dataset with stand-in embeddings into --out.
    Synth(SynthArgs),
}

#[derive(Debug, Clone, Default, Args)]
pub struct RunArgs {
    #[arg(long, value_enum)]
    pub regime: Option<Regime>,
    #[arg(long)]
    pub annotations: Option<PathBuf>,
    #[arg(long)]
    pub taxonomy: Option<PathBuf>,
    #[arg(long)]
    pub splits_dir: Option<PathBuf>,
    #[arg(long)]
    pub pairs: Option<PathBuf>,
    #[arg(long)]
    pub pair_embeddings: Option<PathBuf>,
    #[arg(long)]
    pub text_embeddings: Option<PathBuf>,
    #[arg(long)]
    pub detections: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Multiplier on cosine similarities before the softmax [default: 100].
    #[arg(long)]
    pub logit_scale: Option<f64>,
    /// Minimum IoU on both boxes for a true positive [default: 0.5].
    #[arg(long)]
    pub iou_threshold: Option<f64>,
    /// Detector boxes below this score are dropped [default: 0.25].
    #[arg(long)]
    pub score_threshold: Option<f64>,
    /// Pairs kept per image in the detector regime [default: 100].
    #[arg(long)]
    pub max_pairs: Option<usize>,
    /// Pairs without a region embedding: fail or skip [default: fail].
    #[arg(long, value_enum)]
    pub on_missing: Option<MissingPolicy>,
    /// Classes each pair's softmax runs over [default: object-verbs].
    #[arg(long, value_enum)]
    pub candidates: Option<CandidateMode>,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    /// Report JSON files; the first is the baseline.
    #[arg(required = true, num_args = 2..)]
    pub reports: Vec<PathBuf>,
    /// Row labels, comma separated [default: file stems].
    #[arg(long, value_delimiter = ',')]
    pub labels: Option<Vec<String>>,
    /// Also write the table to this file.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 20)]
    pub images: usize,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    /// Gaussian noise added to each region embedding coordinate.
    #[arg(long, default_value_t = 0.0)]
    pub noise: f64,
    #[arg(long, default_value_t = 64)]
    pub dim: usize,
    /// Chance that an annotated pair carries a second verb.
    #[arg(long, default_value_t = 0.0)]
    pub multi_verb_prob: f64,
}

/// Contents of a `--config` file. Relative paths resolve against the
/// current directory, like flags.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub regime: Option<Regime>,
    pub annotations: Option<PathBuf>,
    pub taxonomy: Option<PathBuf>,
    pub splits_dir: Option<PathBuf>,
    pub pairs: Option<PathBuf>,
    pub pair_embeddings: Option<PathBuf>,
    pub text_embeddings: Option<PathBuf>,
    pub detections: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub logit_scale: Option<f64>,
    pub iou_threshold: Option<f64>,
    pub score_threshold: Option<f64>,
    pub max_pairs: Option<usize>,
    pub on_missing: Option<MissingPolicy>,
    pub candidates: Option<CandidateMode>,
}

/// Resolved settings for one command.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub regime: Option<Regime>,
    pub annotations: Option<PathBuf>,
    pub taxonomy: Option<PathBuf>,
    pub splits_dir: Option<PathBuf>,
    pub pairs: Option<PathBuf>,
    pub pair_embeddings: Option<PathBuf>,
    pub text_embeddings: Option<PathBuf>,
    pub detections: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub logit_scale: f64,
    pub iou_threshold: f64,
    pub score_threshold: f64,
    pub max_pairs: usize,
    pub on_missing: MissingPolicy,
    pub candidates: CandidateMode,
}

impl RunConfig {
    /// Flags win over the config file; anything left unset takes its default.
    pub fn resolve(args: RunArgs, file: Option<ConfigFile>) -> Result<Self> {
        let f = file.unwrap_or_default();
        let cfg = RunConfig {
            regime: args.regime.or(f.regime),
            annotations: args.annotations.or(f.annotations),
            taxonomy: args.taxonomy.or(f.taxonomy),
            splits_dir: args.splits_dir.or(f.splits_dir),
            pairs: args.pairs.or(f.pairs),
            pair_embeddings: args.pair_embeddings.or(f.pair_embeddings),
            text_embeddings: args.text_embeddings.or(f.text_embeddings),
            detections: args.detections.or(f.detections),
            out: args.out.or(f.out),
            logit_scale: args.logit_scale.or(f.logit_scale).unwrap_or(DEFAULT_LOGIT_SCALE),
            iou_threshold: args.iou_threshold.or(f.iou_threshold).unwrap_or(DEFAULT_IOU_THRESHOLD),
            score_threshold: args
                .score_threshold
                .or(f.score_threshold)
                .unwrap_or(PairingParams::DEFAULT_SCORE_THRESHOLD),
            max_pairs: args.max_pairs.or(f.max_pairs).unwrap_or(PairingParams::DEFAULT_MAX_PAIRS),
            on_missing: args.on_missing.or(f.on_missing).unwrap_or_default(),
            candidates: args.candidates.or(f.candidates).unwrap_or_default(),
        };
        cfg.check()?;
        Ok(cfg)
    }

    fn check(&self) -> Result<()> {
        if !(self.logit_scale.is_finite() && self.logit_scale > 0.0) {
            return Err(Error::Config(format!("--logit-scale must be positive, got {}", self.logit_scale)));
        }
        if !(self.iou_threshold > 0.0 && self.iou_threshold < 1.0) {
            return Err(Error::Config(format!(
                "--iou-threshold must lie in (0, 1), got {}",
                self.iou_threshold
            )));
        }
        if !(0.0..=1.0).contains(&self.score_threshold) {
            return Err(Error::Config(format!(
                "--score-threshold must lie in [0, 1], got {}",
                self.score_threshold
            )));
        }
        if self.max_pairs == 0 {
            return Err(Error::Config("--max-pairs must be at least 1".into()));
        }
        let inputs = [
            ("--annotations", &self.annotations),
            ("--taxonomy", &self.taxonomy),
            ("--pairs", &self.pairs),
            ("--pair-embeddings", &self.pair_embeddings),
            ("--text-embeddings", &self.text_embeddings),
            ("--detections", &self.detections),
        ];
        for (flag, path) in inputs {
            if let Some(p) = path {
                if !p.is_file() {
                    return Err(Error::Config(format!("{flag} {} does not exist", p.display())));
                }
            }
        }
        if let Some(d) = &self.splits_dir {
            if !d.is_dir() {
                return Err(Error::Config(format!("--splits-dir {} is not a directory", d.display())));
            }
        }
        Ok(())
    }
}

fn require<'a>(value: &'a Option<PathBuf>, flag: &str, command: &str) -> Result<&'a Path> {
    value
        .as_deref()
        .ok_or_else(|| Error::Config(format!("{command} requires {flag}")))
}

fn load_config_file(path: Option<&Path>) -> Result<Option<ConfigFile>> {
    path.map(|p| {
        if !p.is_file() {
            return Err(Error::Config(format!("--config {} does not exist", p.display())));
        }
        jsonl::read_json(p)
    })
    .transpose()
}

pub fn run(cli: Cli) -> Result<()> {
    let file = load_config_file(cli.config.as_deref())?;
    match cli.command {
        Command::Pairs(a) => cmd_pairs(&RunConfig::resolve(a, file)?),
        Command::Score(a) => cmd_score(&RunConfig::resolve(a, file)?),
        Command::Eval(a) => cmd_eval(&RunConfig::resolve(a, file)?),
        Command::Compare(a) => cmd_compare(&a),
        Command::Validate(a) => cmd_validate(&RunConfig::resolve(a, file)?),
        Command::Splits(a) => cmd_splits(&RunConfig::resolve(a, file)?),
        Command::Synth(a) => cmd_synth(&a),
    }
}

/// Exit status for an error: 2 for configuration and usage problems, 1 otherwise.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) => 2,
        _ => 1,
    }
}

pub fn cmd_pairs(cfg: &RunConfig) -> Result<()> {
    let regime = cfg
        .regime
        .ok_or_else(|| Error::Config("pairs requires --regime".into()))?;
    let out = require(&cfg.out, "--out", "pairs")?;
    let taxonomy = load_taxonomy(require(&cfg.taxonomy, "--taxonomy", "pairs")?)?;
    let pairs = match regime {
        Regime::Gt | Regime::GtR => {
            let anno = load_annotations(require(&cfg.annotations, "--annotations", "pairs")?, &taxonomy)?;
            pairs_from_annotations(regime, &anno, &taxonomy)?
        }
        Regime::Detector => {
            let dets_path = require(&cfg.detections, "--detections", "pairs --regime detector")?;
            let boxes = read_detection_boxes(dets_path, Some(&taxonomy))?;
            let anno = cfg
                .annotations
                .as_deref()
                .map(|p| load_annotations(p, &taxonomy))
                .transpose()?;
            let person = taxonomy
                .person_object_id()
                .ok_or_else(|| Error::Taxonomy("taxonomy has no person object".into()))?;
            let params = PairingParams {
                score_threshold: cfg.score_threshold,
                max_pairs_per_image: cfg.max_pairs,
                person,
            };
            pairs_from_detections(&boxes, anno.as_ref(), &params)?
        }
    };
    write_pairs(out, &pairs)?;
    let images = count_images(&pairs);
    eprintln!("pairs: regime={regime} images={images} pairs={}", pairs.len());
    Ok(())
}

fn count_images(pairs: &[CandidatePair]) -> usize {
    pairs.iter().map(|p| p.image_id.as_str()).collect::<std::collections::HashSet<_>>().len()
}

pub fn cmd_score(cfg: &RunConfig) -> Result<()> {
    let pairs = require(&cfg.pairs, "--pairs", "score")?;
    let out = require(&cfg.out, "--out", "score")?;
    let taxonomy = load_taxonomy(require(&cfg.taxonomy, "--taxonomy", "score")?)?;
    let pair_archive = EmbeddingArchive::load(require(&cfg.pair_embeddings, "--pair-embeddings", "score")?)?;
    let text_archive = EmbeddingArchive::load(require(&cfg.text_embeddings, "--text-embeddings", "score")?)?;
    if pair_archive.dim() != text_archive.dim() {
        return Err(Error::Consistency(format!(
            "pair embeddings have dim {}, text embeddings dim {}",
            pair_archive.dim(),
            text_archive.dim()
        )));
    }
    let params = ScoringParams {
        logit_scale: cfg.logit_scale,
        candidates: cfg.candidates,
    };
    let s = run_scoring(pairs, &pair_archive, &text_archive, &taxonomy, &params, cfg.on_missing, out)?;
    eprintln!(
        "score: pairs_scored={} detections={} skipped_missing={}",
        s.pairs_scored, s.detections_emitted, s.missing_embeddings
    );
    Ok(())
}

fn load_splits(cfg: &RunConfig, taxonomy: &HoiTaxonomy) -> Result<Vec<SplitDefinition>> {
    let mut splits = match &cfg.splits_dir {
        Some(dir) => load_splits_dir(dir, taxonomy)?,
        None => Vec::new(),
    };
    if !splits.iter().any(|s| s.name == SplitName::Default) {
        splits.insert(0, SplitDefinition::default_for(taxonomy));
    }
    Ok(splits)
}

fn stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

pub fn cmd_eval(cfg: &RunConfig) -> Result<()> {
    let dets = require(&cfg.detections, "--detections", "eval")?;
    let out = require(&cfg.out, "--out", "eval")?;
    let taxonomy = load_taxonomy(require(&cfg.taxonomy, "--taxonomy", "eval")?)?;
    let anno = load_annotations(require(&cfg.annotations, "--annotations", "eval")?, &taxonomy)?;
    let splits = load_splits(cfg, &taxonomy)?;
    let report = evaluation::evaluate_file(dets, &anno, &taxonomy, &splits, cfg.iou_threshold)?;
    report.write(out)?;
    let label = cfg.regime.map(|r| r.to_string()).unwrap_or_else(|| stem(dets));
    print!("{}", render_table(&[(label, report)])?);
    Ok(())
}

pub fn cmd_compare(args: &CompareArgs) -> Result<()> {
    let labels: Vec<String> = match &args.labels {
        Some(l) if l.len() != args.reports.len() => {
            return Err(Error::Config(format!(
                "{} labels given for {} reports",
                l.len(),
                args.reports.len()
            )))
        }
        Some(l) => l.clone(),
        None => args.reports.iter().map(|p| stem(p)).collect(),
    };
    let rows = labels
        .into_iter()
        .zip(&args.reports)
        .map(|(l, p)| Ok((l, EvalReport::load(p)?)))
        .collect::<Result<Vec<_>>>()?;
    let table = compare_reports(&rows)?;
    if let Some(out) = &args.out {
        fs::write(out, &table).map_err(|e| Error::io(out, e))?;
    }
    print!("{table}");
    Ok(())
}

/// Record kind of a JSON Lines file, judged from its first record.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JsonlKind {
    HoiDetections,
    DetectorBoxes,
    Pairs,
    Empty,
}

pub fn sniff_jsonl(path: &Path) -> Result<JsonlKind> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let Some((i, line)) = text.lines().enumerate().find(|(_, l)| !l.trim().is_empty()) else {
        return Ok(JsonlKind::Empty);
    };
    let value: serde_json::Value =
        serde_json::from_str(line).map_err(|e| Error::format(path, format!("line {}", i + 1), e))?;
    let has = |k: &str| value.get(k).is_some();
    if has("hoi_id") {
        Ok(JsonlKind::HoiDetections)
    } else if has("pair_index") {
        Ok(JsonlKind::Pairs)
    } else if has("category_id") {
        Ok(JsonlKind::DetectorBoxes)
    } else {
        Err(Error::format(path, format!("line {}", i + 1), "unrecognised record kind"))
    }
}

pub fn cmd_validate(cfg: &RunConfig) -> Result<()> {
    let mut checked = 0usize;
    let taxonomy = match &cfg.taxonomy {
        Some(p) => {
            let t = load_taxonomy(p)?;
            let shape = match t.check_hico_det_shape() {
                Ok(()) => "HICO-DET shape".to_string(),
                Err(e) => format!("not HICO-DET shaped: {e}"),
            };
            println!("ok taxonomy {}: {} classes, {} rare ({shape})", p.display(), t.len(), t.rare_ids().len());
            checked += 1;
            Some(t)
        }
        None => None,
    };
    let need_tax = |flag: &str| {
        taxonomy
            .as_ref()
            .ok_or_else(|| Error::Config(format!("validating {flag} requires --taxonomy")))
    };

    let anno: Option<Annotations> = match &cfg.annotations {
        Some(p) => {
            let a = load_annotations(p, need_tax("--annotations")?)?;
            println!("ok annotations {}: {} images, {} instances", p.display(), a.len(), a.num_instances());
            checked += 1;
            Some(a)
        }
        None => None,
    };
    if let Some(dir) = &cfg.splits_dir {
        let splits = load_splits_dir(dir, need_tax("--splits-dir")?)?;
        for s in &splits {
            println!("ok split {}: {} unseen, {} seen", s.name, s.unseen.len(), s.seen.len());
        }
        checked += 1;
    }

    let pairs = match &cfg.pairs {
        Some(p) => {
            let pairs = read_pairs(p)?;
            if let Some(a) = &anno {
                if let Some(bad) = pairs.iter().find(|q| a.get(&q.image_id).is_none()) {
                    return Err(Error::Validation(format!("pair {} references unknown image", bad.embedding_key())));
                }
            }
            println!("ok pairs {}: {} pairs", p.display(), pairs.len());
            checked += 1;
            Some(pairs)
        }
        None => None,
    };
    let pair_archive = match &cfg.pair_embeddings {
        Some(p) => {
            let a = EmbeddingArchive::load(p)?;
            println!("ok pair embeddings {}: {} vectors of dim {}", p.display(), a.len(), a.dim());
            checked += 1;
            Some(a)
        }
        None => None,
    };
    if let (Some(pairs), Some(archive)) = (&pairs, &pair_archive) {
        let missing: Vec<String> = pairs
            .iter()
            .map(CandidatePair::embedding_key)
            .filter(|k| archive.get(k).is_none())
            .collect();
        if let Some(first) = missing.first() {
            return Err(Error::Validation(format!(
                "{} pairs have no region embedding, first {first:?}",
                missing.len()
            )));
        }
    }
    if let Some(p) = &cfg.text_embeddings {
        let a = EmbeddingArchive::load(p)?;
        if let Some(t) = &taxonomy {
            if let Some(id) = t.ids().find(|id| a.get(&text_key(*id)).is_none()) {
                return Err(Error::MissingKey(text_key(id)));
            }
        }
        if let Some(pa) = &pair_archive {
            if pa.dim() != a.dim() {
                return Err(Error::Consistency(format!(
                    "pair embeddings have dim {}, text embeddings dim {}",
                    pa.dim(),
                    a.dim()
                )));
            }
        }
        println!("ok text embeddings {}: {} vectors of dim {}", p.display(), a.len(), a.dim());
        checked += 1;
    }
    if let Some(p) = &cfg.detections {
        match sniff_jsonl(p)? {
            JsonlKind::Empty => println!("ok detections {}: empty", p.display()),
            JsonlKind::HoiDetections => {
                let d = read_detections(p, taxonomy.as_ref())?;
                if let Some(a) = &anno {
                    if let Some(bad) = d.iter().find(|x| a.get(&x.image_id).is_none()) {
                        return Err(Error::Validation(format!(
                            "detection references unknown image {:?}",
                            bad.image_id
                        )));
                    }
                }
                println!("ok detections {}: {} HOI detections", p.display(), d.len());
            }
            JsonlKind::DetectorBoxes => {
                let d: Vec<DetectionBox> = read_detection_boxes(p, taxonomy.as_ref())?;
                println!("ok detections {}: {} detector boxes", p.display(), d.len());
            }
            JsonlKind::Pairs => {
                let d = read_pairs(p)?;
                println!("ok detections {}: {} pairs", p.display(), d.len());
            }
        }
        checked += 1;
    }
    if checked == 0 {
        return Err(Error::Config("validate needs at least one file flag".into()));
    }
    Ok(())
}

fn write_splits(dir: &Path, files: &[SplitFile]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for f in files {
        crate::dataset::splits::write_split_file(&dir.join(format!("{}.json", f.name)), f)?;
    }
    Ok(())
}

pub fn cmd_splits(cfg: &RunConfig) -> Result<()> {
    let taxonomy = load_taxonomy(require(&cfg.taxonomy, "--taxonomy", "splits")?)?;
    let out = require(&cfg.out, "--out", "splits")?;
    let files = generate_default_splits(&taxonomy);
    for f in &files {
        SplitDefinition::from_file(f, &taxonomy)?;
    }
    write_splits(out, &files)?;
    eprintln!("splits: wrote {} files to {}", files.len(), out.display());
    Ok(())
}

/// Writes taxonomy, annotations, splits, prompt embeddings, detector boxes
/// and, per regime, region embeddings for the pairs the default settings
/// produce.
pub fn cmd_synth(args: &SynthArgs) -> Result<()> {
    let cfg = SynthConfig {
        seed: args.seed,
        num_images: args.images,
        multi_verb_prob: args.multi_verb_prob,
        ..SynthConfig::default()
    };
    if !(0.0..=1.0).contains(&cfg.multi_verb_prob) || args.noise.is_nan() || args.noise < 0.0 {
        return Err(Error::Config("--multi-verb-prob must lie in [0, 1] and --noise be non-negative".into()));
    }
    let ds = synth::synth_dataset(&cfg);
    if args.dim < ds.taxonomy.len() {
        return Err(Error::Config(format!(
            "--dim must be at least the class count {}",
            ds.taxonomy.len()
        )));
    }
    let out = &args.out;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    crate::dataset::taxonomy::write_taxonomy(&out.join("taxonomy.json"), &ds.taxonomy)?;
    ds.annotations.write(&out.join("annotations.json"))?;
    write_splits(&out.join("splits"), &generate_default_splits(&ds.taxonomy))?;
    let text = synth::orthonormal_text_archive(&ds.taxonomy, args.dim, args.seed)?;
    text.write(&out.join("text_embeddings.hoie"))?;
    let boxes = synth::detections(&ds, 0.05, args.seed);
    jsonl::write_jsonl(&out.join("detector_boxes.jsonl"), &boxes)?;

    let person = ds.taxonomy.person_object_id().expect("synthetic taxonomy has a person");
    for regime in [Regime::Gt, Regime::GtR, Regime::Detector] {
        let pairs = match regime {
            Regime::Detector => pairs_from_detections(&boxes, Some(&ds.annotations), &PairingParams::new(person))?,
            _ => pairs_from_annotations(regime, &ds.annotations, &ds.taxonomy)?,
        };
        let archive = synth::pair_archive(&pairs, &ds.annotations, &ds.taxonomy, &text, args.noise, args.seed)?;
        archive.write(&out.join(format!("pair_embeddings.{regime}.hoie")))?;
    }
    eprintln!(
        "synth: {} images, {} instances, {} classes in {}",
        ds.annotations.len(),
        ds.annotations.num_instances(),
        ds.taxonomy.len(),
        out.display()
    );
    Ok(())
}
