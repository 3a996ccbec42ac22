use std::sync::Arc;

use rayon::prelude::*;

use super::report::{rate, BenchmarkReport, RunMetadata, SubsetScore, WinogroundSummary};
use super::{open_cache, slug, write_json, Benchmarks, Mode, MockRegistry, RunConfig, RunError, WinogroundScoring};
use crate::dataset::{PairItem, Subset, WinogroundItem};
use crate::forge::{load_bank, DemoBank, DemoSource};
use crate::gateway::{connect, Model, ModelSpec, ResponseCache, ScoreKind};
use crate::prompt::{
    assign_labels, render_fewshot_prompt, render_winoground_yesno_prompt, render_zeroshot_choice_prompt, select_demos,
    FewShotQuery, LabelMap, LabeledDemonstration, Polarity, PromptBundle,
};
use crate::scoring::{
    cosine_similarity, mean_token_logit, pairwise_correct, parse_choice, parse_yes_no, winoground_item_scores,
    SimilarityMatrix2x2, WinogroundScores, YesNo,
};
use crate::Similarity2x2;

const AVERAGE_NOTE: &str = "Avg. is the unweighted mean of the subscores present in the row";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Verdict {
    Correct,
    Incorrect,
    Unparseable,
}

#[derive(Debug, Clone, Copy)]
struct WinoOutcome {
    scores: WinogroundScores,
    probes: usize,
    unparseable: usize,
    score_kind: Option<ScoreKind>,
}

/// Runs `f` over `items` on at most `concurrency` threads; results keep item
/// order.
fn par_items<I, O, F>(items: &[I], concurrency: usize, f: F) -> Vec<Result<O, RunError>>
where
    I: Sync,
    O: Send,
    F: Fn(&I) -> Result<O, RunError> + Sync + Send,
{
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(concurrency.max(1))
        .build()
        .expect("worker pool starts");
    pool.install(|| items.par_iter().map(&f).collect())
}

fn method_label(mode: Mode, shots: Option<usize>) -> String {
    match (mode, shots) {
        (Mode::GenerativeFewShot, Some(n)) => format!("{n}-Shot"),
        _ => "Zero-Shot".into(),
    }
}

fn metadata(config: &RunConfig, spec: &ModelSpec, bank: Option<&DemoBank>) -> RunMetadata {
    let generative = config.mode != Mode::ContrastiveZeroShot;
    let mut notes = Vec::new();
    if generative {
        notes.push("query captions are placed at A or B per item from a hash of (seed, item_id)".to_string());
        notes.push("token scores are matched after stripping one leading space".to_string());
        if config.mode == Mode::GenerativeFewShot {
            notes.push("Winoground few-shot probes are preceded by the same A/B choice demonstrations".to_string());
        }
        if config.winoground_scoring == WinogroundScoring::BinaryYesNo {
            notes.push(
                "binary yes/no scoring: text, image and group scores collapse and are not comparable to similarity scores"
                    .to_string(),
            );
        }
    } else {
        notes.push("cosine similarity; ties count as incorrect".to_string());
    }
    RunMetadata {
        model: spec.name.clone(),
        mode: config.mode,
        method: method_label(config.mode, config.shots),
        shots: config.shots,
        one_shot_index: (config.shots == Some(1)).then_some(config.one_shot_index),
        bank_id: bank.map(|b| b.bank_id.clone()),
        sample_type: bank.and_then(DemoBank::source),
        seed: config.seed,
        config_hash: config.hash(),
        score_kind: None,
        target_token: generative.then(|| config.target_token.clone()),
        logit_floor: generative.then_some(config.logit_floor),
        average: AVERAGE_NOTE.into(),
        notes,
    }
}

fn assemble(
    meta: RunMetadata,
    pairs: &[(Subset, Verdict)],
    wino: Option<&[WinoOutcome]>,
    scoring: Option<WinogroundScoring>,
    partial: bool,
) -> BenchmarkReport {
    let subsets = Subset::ALL
        .iter()
        .filter_map(|&subset| {
            let count = |v: Verdict| pairs.iter().filter(|(s, x)| *s == subset && *x == v).count();
            let (c, i, u) = (count(Verdict::Correct), count(Verdict::Incorrect), count(Verdict::Unparseable));
            (c + i + u > 0).then(|| SubsetScore::new(subset, c, i, u))
        })
        .collect();
    let mut meta = meta;
    let winoground = wino.map(|outcomes| {
        let n = outcomes.len();
        let t = outcomes.iter().filter(|o| o.scores.text_correct).count();
        let i = outcomes.iter().filter(|o| o.scores.image_correct).count();
        let g = outcomes.iter().filter(|o| o.scores.group_correct).count();
        if meta.score_kind.is_none() {
            meta.score_kind = outcomes.iter().find_map(|o| o.score_kind);
        }
        WinogroundSummary {
            items: n,
            text_correct: t,
            image_correct: i,
            group_correct: g,
            text: rate(t, n),
            image: rate(i, n),
            group: rate(g, n),
            probes: outcomes.iter().map(|o| o.probes).sum(),
            unparseable_probes: outcomes.iter().map(|o| o.unparseable).sum(),
            scoring,
        }
    });
    BenchmarkReport { metadata: meta, subsets, winoground, partial }
}

/// Splits item results into successes and the first failure (in item order).
/// Successful outputs by index, and the first failure with its item id.
type Settled<O> = (Vec<(usize, O)>, Option<(String, RunError)>);

fn settle<I, O: Copy>(items: &[I], results: Vec<Result<O, RunError>>, id: impl Fn(&I) -> &str) -> Settled<O> {
    let mut ok = Vec::new();
    let mut first = None;
    for (k, r) in results.into_iter().enumerate() {
        match r {
            Ok(o) => ok.push((k, o)),
            Err(e) if first.is_none() => first = Some((id(&items[k]).to_string(), e)),
            Err(_) => {}
        }
    }
    (ok, first)
}

fn finish(
    meta: RunMetadata,
    data: &Benchmarks,
    pairs: Vec<Result<Verdict, RunError>>,
    wino: Vec<Result<WinoOutcome, RunError>>,
    scoring: Option<WinogroundScoring>,
) -> Result<BenchmarkReport, RunError> {
    let (pair_ok, pair_err) = settle(&data.pairs, pairs, |p: &PairItem| &p.item_id);
    let (wino_ok, wino_err) = settle(&data.winoground, wino, |w: &WinogroundItem| &w.item_id);
    let pair_tally: Vec<(Subset, Verdict)> = pair_ok.iter().map(|&(k, v)| (data.pairs[k].subset, v)).collect();
    let wino_tally: Vec<WinoOutcome> = wino_ok.into_iter().map(|(_, o)| o).collect();
    let wino_view = (!data.winoground.is_empty()).then_some(&wino_tally[..]);
    match pair_err.or(wino_err) {
        None => Ok(assemble(meta, &pair_tally, wino_view, scoring, false)),
        Some((item_id, source)) => Err(RunError::Item {
            item_id,
            source: Box::new(source),
            partial: Box::new(assemble(meta, &pair_tally, wino_view, scoring, true)),
        }),
    }
}

fn contrastive_pair(model: &Model, item: &PairItem) -> Result<Verdict, RunError> {
    let image = model.embed_image(&item.image)?;
    let pos = cosine_similarity(&model.embed_text(&item.caption_pos)?, &image)?;
    let neg = cosine_similarity(&model.embed_text(&item.caption_neg)?, &image)?;
    Ok(if pairwise_correct(pos, neg) { Verdict::Correct } else { Verdict::Incorrect })
}

fn contrastive_winoground(model: &Model, item: &WinogroundItem) -> Result<WinoOutcome, RunError> {
    let captions = [model.embed_text(&item.caption_0)?, model.embed_text(&item.caption_1)?];
    let images = [model.embed_image(&item.image_0)?, model.embed_image(&item.image_1)?];
    let m: Similarity2x2 = SimilarityMatrix2x2::from_fn(|i, j| cosine_similarity(&captions[i], &images[j]))?;
    Ok(WinoOutcome { scores: winoground_item_scores(&m), probes: 0, unparseable: 0, score_kind: None })
}

/// Embeds every image and caption and compares cosine similarities.
pub fn run_contrastive_eval(model: &Model, data: &Benchmarks, config: &RunConfig) -> Result<BenchmarkReport, RunError> {
    if config.mode != Mode::ContrastiveZeroShot {
        return Err(RunError::Config(format!("run_contrastive_eval needs contrastive mode, got {:?}", config.mode)));
    }
    let pairs = par_items(&data.pairs, config.concurrency, |item| contrastive_pair(model, item));
    let wino = par_items(&data.winoground, config.concurrency, |item| contrastive_winoground(model, item));
    finish(metadata(config, model.spec(), None), data, pairs, wino, None)
}

struct Prompter<'a> {
    config: &'a RunConfig,
    demos: Option<(Vec<LabeledDemonstration>, usize)>,
}

impl Prompter<'_> {
    fn choice(&self, item: &PairItem, labels: LabelMap) -> Result<PromptBundle, RunError> {
        Ok(match &self.demos {
            None => render_zeroshot_choice_prompt(item, labels),
            Some((demos, shots)) => render_fewshot_prompt(demos, &FewShotQuery::for_item(item, labels), *shots)?,
        })
    }

    fn probe(&self, caption: &str, image: &crate::ImageRef) -> Result<PromptBundle, RunError> {
        Ok(match &self.demos {
            None => render_winoground_yesno_prompt(caption, image),
            Some((demos, shots)) => render_fewshot_prompt(demos, &FewShotQuery::Probe { caption, image }, *shots)?,
        })
    }

    fn pair(&self, model: &Model, item: &PairItem) -> Result<Verdict, RunError> {
        let labels = LabelMap::seeded(self.config.seed, &item.item_id);
        let bundle = self.choice(item, labels)?;
        let reply = model.generate(&bundle, false)?;
        Ok(match parse_choice(&reply.text).label() {
            None => Verdict::Unparseable,
            Some(label) if labels.polarity_of(label) == Polarity::Positive => Verdict::Correct,
            Some(_) => Verdict::Incorrect,
        })
    }

    fn winoground(&self, model: &Model, item: &WinogroundItem) -> Result<WinoOutcome, RunError> {
        let scoring = self.config.winoground_scoring;
        let need_scores = scoring == WinogroundScoring::YesLogit;
        let mut unparseable = 0;
        let mut score_kind = None;
        let m: Similarity2x2 = SimilarityMatrix2x2::from_fn(|i, j| -> Result<f64, RunError> {
            let bundle = self.probe(item.caption(i), item.image(j))?;
            let reply = model.generate(&bundle, need_scores)?;
            let answer = parse_yes_no(&reply.text);
            if answer == YesNo::Unparseable {
                unparseable += 1;
            }
            if !reply.rows.is_empty() {
                score_kind = Some(reply.score_kind);
            }
            Ok(match scoring {
                WinogroundScoring::YesLogit => {
                    mean_token_logit(&reply.rows, &self.config.target_token, self.config.logit_floor)?
                }
                WinogroundScoring::BinaryYesNo => f64::from(u8::from(answer == YesNo::Yes)),
            })
        })?;
        Ok(WinoOutcome { scores: winoground_item_scores(&m), probes: 4, unparseable, score_kind })
    }
}

/// Prompts a generative model with two-caption choices (ARO, SugarCrepe)
/// and yes/no probes (Winoground), zero- or few-shot.
pub fn run_generative_eval(
    model: &Model,
    data: &Benchmarks,
    config: &RunConfig,
    bank: Option<&DemoBank>,
) -> Result<BenchmarkReport, RunError> {
    let demos = match (config.mode, config.shots, bank) {
        (Mode::GenerativeZeroShot, _, _) => None,
        (Mode::GenerativeFewShot, Some(shots), Some(bank)) => {
            let labeled = assign_labels(&bank.demos, config.seed)?;
            Some((select_demos(&labeled, shots, config.one_shot_index)?, shots))
        }
        (Mode::GenerativeFewShot, _, _) => {
            return Err(RunError::Config("few-shot evaluation needs `shots` and a loaded bank".into()))
        }
        (Mode::ContrastiveZeroShot, _, _) => {
            return Err(RunError::Config("run_generative_eval needs a generative mode".into()))
        }
    };
    let prompter = Prompter { config, demos };
    let pairs = par_items(&data.pairs, config.concurrency, |item| prompter.pair(model, item));
    let wino = par_items(&data.winoground, config.concurrency, |item| prompter.winoground(model, item));
    let meta = metadata(config, model.spec(), bank);
    finish(meta, data, pairs, wino, Some(config.winoground_scoring))
}

/// One model under one config. Returns the result and the number of calls
/// that reached the backend.
pub(crate) fn run_cell(
    spec: &ModelSpec,
    config: &RunConfig,
    data: &Benchmarks,
    bank: Option<&DemoBank>,
    cache: Option<Arc<ResponseCache>>,
    mocks: &MockRegistry,
) -> (Result<BenchmarkReport, RunError>, u64) {
    let model = match connect(spec, &|name, kind| mocks.lookup(name, kind, data)) {
        Ok(m) => m,
        Err(e) => return (Err(e.into()), 0),
    };
    let model = match cache {
        Some(c) => model.with_cache(c),
        None => model,
    };
    let result = match config.mode {
        Mode::ContrastiveZeroShot => run_contrastive_eval(&model, data, config),
        _ => run_generative_eval(&model, data, config, bank),
    };
    (result, model.backend_calls())
}

#[derive(Debug)]
pub struct RunOutcome {
    pub reports: Vec<BenchmarkReport>,
    /// Model name and error for every model that did not complete.
    pub failures: Vec<(String, RunError)>,
    pub backend_calls: u64,
}

impl RunOutcome {
    pub fn all_completed(&self) -> bool {
        self.failures.is_empty()
    }
}

pub(crate) fn load_config_bank(config: &RunConfig) -> Result<Option<DemoBank>, RunError> {
    let Some(dir) = &config.bank else { return Ok(None) };
    let bank = load_bank(dir)?;
    bank.check()?;
    Ok(Some(bank))
}

/// Evaluates every configured model. Writes `<model>.json` per completed
/// model, `<model>.partial.json` for aborted ones, and `summary.md`.
pub fn evaluate(config: &RunConfig, mocks: &MockRegistry) -> Result<RunOutcome, RunError> {
    config.validate()?;
    let data = Benchmarks::load(&config.benchmarks)?;
    let bank = load_config_bank(config)?;
    let cache = open_cache(config.cache_dir.as_deref())?;
    std::fs::create_dir_all(&config.output_dir)?;
    let mut outcome = RunOutcome { reports: vec![], failures: vec![], backend_calls: 0 };
    for spec in &config.models {
        let (result, calls) = run_cell(spec, config, &data, bank.as_ref(), cache.clone(), mocks);
        outcome.backend_calls += calls;
        match result {
            Ok(report) => {
                write_json(&config.output_dir.join(format!("{}.json", slug(&spec.name))), &report)?;
                outcome.reports.push(report);
            }
            Err(e) => {
                if let RunError::Item { partial, .. } = &e {
                    write_json(&config.output_dir.join(format!("{}.partial.json", slug(&spec.name))), partial)?;
                }
                log::error!("model `{}` failed: {e}", spec.name);
                outcome.failures.push((spec.name.clone(), e));
            }
        }
    }
    let refs: Vec<&BenchmarkReport> = outcome.reports.iter().collect();
    std::fs::write(
        config.output_dir.join("summary.md"),
        super::markdown_table(&refs, super::TableLayout::Models),
    )?;
    Ok(outcome)
}

pub(crate) fn demo_source_label(s: DemoSource) -> &'static str {
    match s {
        DemoSource::Synthetic => "Synthetic",
        DemoSource::Real => "Real",
    }
}
