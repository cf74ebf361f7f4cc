use std::io::Read;
use std::path::{Path, PathBuf};

use blockattn::mask::BlockPartition;
use blockattn::model::{checkpoint, ModelConfig, ToyModel};
use blockattn::segment::{
    boundary_counts, decide_cuts, encode_text, heuristic_segment, insert_candidates, load_jsonl,
    recursive_segment, train_cut_head, BoundaryCounts, CutHead, CutScorer, HashScorer, HeadTrainConfig,
    HeuristicMethod, InsertionRule, NeuralScorer, SegmentationExample, SegmenterConfig,
};
use blockattn::synthetic::planted_segmentation;
use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::run::{finish, Classify, CmdResult, Failure, Run, CUT_HEAD_VERSION};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Rule {
    Newline,
    Space,
    Punctuation,
}

impl From<Rule> for InsertionRule {
    fn from(r: Rule) -> Self {
        match r {
            Rule::Newline => Self::Newline,
            Rule::Space => Self::Space,
            Rule::Punctuation => Self::SentencePunctuation,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scorer {
    /// Trained cut head (`--model`), or a seeded untrained one without it.
    Neural,
    /// Seeded pseudo-random probabilities.
    Hash,
    Average,
    Random,
    Punctuation,
    RandomCandidate,
    AverageCandidate,
}

impl Scorer {
    fn heuristic(self) -> Option<HeuristicMethod> {
        match self {
            Self::Average => Some(HeuristicMethod::Average),
            Self::Random => Some(HeuristicMethod::Random),
            Self::Punctuation => Some(HeuristicMethod::Punctuation),
            Self::RandomCandidate => Some(HeuristicMethod::RandomCandidate),
            Self::AverageCandidate => Some(HeuristicMethod::AverageCandidate),
            Self::Neural | Self::Hash => None,
        }
    }
}

#[derive(Debug, Args)]
pub struct SegmentArgs {
    /// Text file to segment; `-` reads standard input.
    #[arg(long, default_value = "-")]
    input: String,
    /// Where candidate cut tokens are inserted.
    #[arg(long, value_enum, default_value = "newline")]
    rule: Rule,
    /// Recursion depth; defaults to the number of thresholds.
    #[arg(long)]
    depth: Option<usize>,
    /// One cut threshold per level, comma separated.
    #[arg(long, value_delimiter = ',')]
    thresholds: Option<Vec<f64>>,
    #[arg(long, value_enum, default_value = "neural")]
    scorer: Scorer,
    /// Number of blocks for the heuristic scorers.
    #[arg(long, default_value_t = 2)]
    parallel_degree: usize,
    /// Directory written by `train-segmenter`.
    #[arg(long)]
    model: Option<PathBuf>,
}

#[derive(Debug, Serialize)]
struct Block<'a> {
    start: usize,
    end: usize,
    text: std::borrow::Cow<'a, str>,
}

fn read_input(input: &str) -> CmdResult<String> {
    let mut text = String::new();
    if input == "-" {
        std::io::stdin().read_to_string(&mut text).usage("cannot read standard input")?;
    } else {
        text = std::fs::read_to_string(input).usage(&format!("cannot read {input}"))?;
    }
    Ok(text)
}

fn segmenter_config(run: &Run, args: &SegmentArgs) -> CmdResult<SegmenterConfig> {
    let mut cfg = match run.read_config()? {
        Some(text) => toml::from_str::<SegmenterConfig>(&text).usage("bad segmenter config")?,
        None => SegmenterConfig::default(),
    };
    if let Some(t) = &args.thresholds {
        cfg.thresholds = t.clone();
        cfg.recursion_depth = t.len();
    }
    if let Some(d) = args.depth {
        if args.thresholds.is_none() {
            let last = cfg.thresholds.last().copied().unwrap_or(0.5);
            cfg.thresholds.resize(d, last);
        }
        cfg.recursion_depth = d;
    }
    cfg.validate().usage("invalid segmenter settings")?;
    Ok(cfg)
}

#[derive(Serialize, Deserialize)]
struct HeadFile {
    version: u32,
    head: CutHead,
}

fn load_segmenter(dir: &Path) -> CmdResult<(ToyModel, CutHead)> {
    let model = checkpoint::load(dir.join("backbone.bkvm")).usage("cannot load segmenter backbone")?;
    let path = dir.join("head.json");
    let text = std::fs::read_to_string(&path).usage(&format!("cannot read {}", path.display()))?;
    let file: HeadFile = serde_json::from_str(&text).usage("bad cut head file")?;
    if file.version != CUT_HEAD_VERSION {
        return Err(Failure::Usage(format!("unsupported cut head version {}", file.version)));
    }
    Ok((model, file.head))
}

fn save_segmenter(dir: &Path, model: &ToyModel, head: &CutHead) -> CmdResult<()> {
    checkpoint::save(model, dir.join("backbone.bkvm")).usage("cannot write backbone")?;
    let file = HeadFile {
        version: CUT_HEAD_VERSION,
        head: head.clone(),
    };
    std::fs::write(dir.join("head.json"), serde_json::to_string(&file).expect("head serializes"))
        .usage("cannot write cut head")
}

fn byte_cut_token() -> blockattn::TokenId {
    ModelConfig::byte_level(1, 1, 1, 1, 0).cut_token()
}

/// Small byte-level backbone shared by the untrained and trained segmenters.
fn segmenter_backbone(max_seq_len: usize, seed: u64) -> CmdResult<(ToyModel, CutHead)> {
    let model = ToyModel::new(ModelConfig::byte_level(2, 2, 8, max_seq_len.max(2), seed)).usage("bad backbone")?;
    let head = CutHead::new(model.config().hidden_dim, seed);
    Ok((model, head))
}

pub fn segment(run: &Run, args: &SegmentArgs) -> CmdResult<()> {
    let seed = run.seed_or(0);
    let cfg = segmenter_config(run, args)?;
    if args.scorer.heuristic().is_some() && args.parallel_degree == 0 {
        return Err(Failure::Usage("--parallel-degree must be at least 1".into()));
    }
    let text = read_input(&args.input)?;
    if text.is_empty() {
        return Err(Failure::Data("input text is empty".into()));
    }
    let tokens = encode_text(&text);
    let rule = InsertionRule::from(args.rule);
    let mut manifest = run.manifest("segment", seed);

    let levels: Vec<BlockPartition> = if let Some(method) = args.scorer.heuristic() {
        vec![heuristic_segment(&tokens, method, args.parallel_degree, rule, seed).data("segmentation failed")?]
    } else {
        let loaded = match &args.model {
            Some(dir) => {
                manifest = manifest.format("checkpoint", checkpoint::VERSION).format("cut_head", CUT_HEAD_VERSION);
                Some(load_segmenter(dir)?)
            }
            None => None,
        };
        let cut = loaded.as_ref().map_or(byte_cut_token(), |(m, _)| m.config().cut_token());
        let seq = insert_candidates(&tokens, rule, cut).data("cannot insert candidates")?;
        let (model, head) = match loaded {
            Some(pair) => pair,
            None => segmenter_backbone(seq.tokens().len(), seed)?,
        };
        let scorer: Box<dyn CutScorer + '_> = match args.scorer {
            Scorer::Hash => Box::new(HashScorer { seed }),
            _ => Box::new(NeuralScorer { model: &model, head: &head }),
        };
        recursive_segment(&seq, scorer.as_ref(), &cfg).data("segmentation failed")?
    };

    let last = levels.last().expect("at least one level");
    let bytes = text.as_bytes();
    let blocks: Vec<Block> = last
        .ranges()
        .iter()
        .map(|r| Block {
            start: r.start,
            end: r.end,
            text: String::from_utf8_lossy(&bytes[r.clone()]),
        })
        .collect();
    log::info!("{} bytes -> {} blocks", bytes.len(), blocks.len());
    let result = json!({
        "scorer": args.scorer,
        "blocks": blocks,
        "levels": levels.iter().map(BlockPartition::boundaries).collect::<Vec<_>>(),
    });
    let manifest = manifest.resolved(json!({
        "input": args.input,
        "rule": args.rule,
        "scorer": args.scorer,
        "parallel_degree": args.parallel_degree,
        "segmenter": cfg,
        "model": args.model,
    }));
    finish(run, manifest, result)
}

#[derive(Debug, Args)]
pub struct TrainSegmenterArgs {
    /// Training corpus, one JSON example per line.
    #[arg(long)]
    train: Option<PathBuf>,
    /// Held-out corpus for boundary F1.
    #[arg(long)]
    held_out: Option<PathBuf>,
    /// Generate this many planted training documents instead of `--train`.
    #[arg(long, default_value_t = 200)]
    planted: usize,
    /// Planted held-out documents, used when `--held-out` is absent.
    #[arg(long, default_value_t = 0)]
    planted_held_out: usize,
    /// Longest candidate sequence the saved backbone accepts.
    #[arg(long, default_value_t = 512)]
    max_seq_len: usize,
}

fn corpus_from(path: &Option<PathBuf>, planted: usize, seed: u64) -> CmdResult<Vec<SegmentationExample>> {
    match path {
        Some(p) => load_jsonl(p).usage(&format!("cannot load corpus {}", p.display())),
        None => Ok(planted_segmentation(planted, 4..=10, 0.3, seed)),
    }
}

pub fn train_segmenter(run: &Run, args: &TrainSegmenterArgs) -> CmdResult<()> {
    let mut cfg = match run.read_config()? {
        Some(text) => toml::from_str::<HeadTrainConfig>(&text).usage("bad training config")?,
        None => HeadTrainConfig::default(),
    };
    cfg.seed = run.seed_or(cfg.seed);
    let out = run.require_out("train-segmenter")?;
    let train = corpus_from(&args.train, args.planted, cfg.seed)?;
    let held = if args.held_out.is_some() || args.planted_held_out > 0 {
        corpus_from(&args.held_out, args.planted_held_out, cfg.seed.wrapping_add(1))?
    } else {
        Vec::new()
    };

        let mut needed = args.max_seq_len;
    for ex in train.iter().chain(&held) {
        needed = needed.max(ex.candidate_sequence(byte_cut_token()).data("bad example")?.tokens().len());
    }
    let (mut model, mut head) = segmenter_backbone(needed, cfg.seed)?;
    let report = train_cut_head(&mut model, &mut head, &train, &cfg).data("training failed")?;
    for (epoch, loss) in report.epoch_losses.iter().enumerate() {
        log::info!("epoch {epoch}: bce {loss:.4}");
    }

    let mut counts = BoundaryCounts::default();
    let cut = model.config().cut_token();
    for ex in &held {
        let seq = ex.candidate_sequence(cut).data("bad held-out example")?;
        let p = NeuralScorer { model: &model, head: &head }.score(&seq).data("scoring failed")?;
        let cuts = decide_cuts(&seq, &p, 0.5).data("scoring failed")?;
        counts.add(boundary_counts(&cuts.boundaries(), &ex.gold_cuts));
    }
    save_segmenter(out, &model, &head)?;

    let result = json!({
        "epoch_losses": report.epoch_losses,
        "train_examples": train.len(),
        "held_out_examples": held.len(),
        "held_out_f1": (!held.is_empty()).then(|| counts.f1()),
        "backbone": out.join("backbone.bkvm"),
        "head": out.join("head.json"),
    });
    let manifest = run
        .manifest("train-segmenter", cfg.seed)
        .format("checkpoint", checkpoint::VERSION)
        .format("cut_head", CUT_HEAD_VERSION)
        .resolved(json!({
            "train": args.train,
            "held_out": args.held_out,
            "planted": args.planted,
            "planted_held_out": args.planted_held_out,
            "max_seq_len": needed,
            "training": cfg,
        }));
    finish(run, manifest, result)
}
