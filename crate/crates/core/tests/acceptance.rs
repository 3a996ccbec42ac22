//! Acceptance suite. Prints one PASS/FAIL/SKIP line per criterion and exits
//! non-zero if any criterion fails.

mod common;

use std::collections::BTreeMap;
use std::path::Path;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{fake_vlm, mock, workspace, write_bank};
use compbench::dataset::write_pairwise_manifest;
use compbench::fixtures::{order_shuffle_fixture, png_bytes};
use compbench::forge::{
    build_synthetic_bank, load_bank, BankStore, Clock, DemoSource, Demonstration, ForgeOptions, Provenance,
    ScriptedImageGen, ScriptedTextGen,
};
use compbench::gateway::{Capabilities, Decoding, ModelKind, ModelSpec};
use compbench::prompt::{
    assign_labels, render_fewshot_prompt, render_winoground_yesno_prompt, render_zeroshot_choice_prompt,
    select_demos, FewShotQuery, Label, LabelMap, LabeledDemonstration,
};
use compbench::runner::{
    evaluate, run_sweep, BenchmarkReport, BenchmarkSpec, MockRegistry, Mode, RunConfig, SweepGrid, WinogroundScoring,
};
use compbench::scoring::{mean_token_logit, winoground_item_scores, LogitRow};
use compbench::{Benchmark, ImageRef, PairItem, Similarity2x2, Subset};

const MATRIX_FIXTURES: usize = 500;
const LOGIT_FIXTURES: usize = 1000;
const LOGIT_TOLERANCE: f64 = 1e-9;
const ORACLE_ITEMS: usize = 50;
const ORACLE_BUDGET: Duration = Duration::from_secs(10);
const ORDER_ITEMS: usize = 200;
const ORDER_BAND: (f64, f64) = (0.4, 0.6);
const BALANCE_DRAWS: usize = 10_000;
const BALANCE_BAND: (f64, f64) = (0.47, 0.53);
const SMOKE_ITEMS: usize = 10;
const SMOKE_MAX_UNPARSEABLE: f64 = 0.5;

enum Verdict {
    Pass(String),
    Fail(String),
    Skip(String),
}

fn verdict(ok: bool, detail: String) -> Verdict {
    if ok { Verdict::Pass(detail) } else { Verdict::Fail(detail) }
}

/// Brute force over the 2×2 matrix: for text, every image (column) must give
/// its own caption a strictly higher score than each other caption; for
/// image, every caption (row) must do the same for its own image.
#[allow(clippy::needless_range_loop)]
fn enumerate(s: &[[f64; 2]; 2]) -> (bool, bool, bool) {
    let mut text = true;
    let mut image = true;
    for own in 0..2 {
        for other in 0..2 {
            if other == own {
                continue;
            }
            text &= s[own][own] > s[other][own];
            image &= s[own][own] > s[own][other];
        }
    }
    (text, image, text && image)
}

fn scoring_oracle() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut mismatches = 0;
    let mut bound_violations = 0;
    for k in 0..MATRIX_FIXTURES {
        // Every other fixture draws from a small integer grid so ties occur.
        let mut draw = || if k % 2 == 0 { rng.random_range(-2..=2) as f64 } else { rng.random_range(-1.0..1.0) };
        let s = [[draw(), draw()], [draw(), draw()]];
        let got = winoground_item_scores(&Similarity2x2::new(s[0][0], s[0][1], s[1][0], s[1][1]));
        if (got.text_correct, got.image_correct, got.group_correct) != enumerate(&s) {
            mismatches += 1;
        }
        if got.group_correct && !(got.text_correct && got.image_correct) {
            bound_violations += 1;
        }
    }
    verdict(
        mismatches == 0 && bound_violations == 0,
        format!("{MATRIX_FIXTURES} fixtures, {mismatches} mismatches, {bound_violations} group > min(text, image)"),
    )
}

fn l_yes_equivalence() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let floor = -20.0;
    let vocab = ["yes", "Yes", "no", "the", "."];
    let mut worst: f64 = 0.0;
    let mut floored_rows = 0;
    for _ in 0..LOGIT_FIXTURES {
        let len = rng.random_range(1..=64);
        let mut plain: Vec<Vec<(&str, f64)>> = Vec::with_capacity(len);
        for _ in 0..len {
            let mut entries = Vec::new();
            for t in vocab {
                if rng.random_bool(0.5) {
                    entries.push((t, rng.random_range(-30.0..5.0)));
                }
            }
            plain.push(entries);
        }
        let rows: Vec<LogitRow<f64>> = plain
            .iter()
            .enumerate()
            .map(|(i, e)| LogitRow::new(i, e.iter().map(|(t, v)| (t.to_string(), *v)).collect::<BTreeMap<_, _>>()))
            .collect();
        let mut sum = 0.0;
        for entries in &plain {
            match entries.iter().find(|(t, _)| *t == "yes") {
                Some((_, v)) => sum += v,
                None => {
                    sum += floor;
                    floored_rows += 1;
                }
            }
        }
        let expected = sum / len as f64;
        let got = mean_token_logit(&rows, "yes", floor).unwrap();
        worst = worst.max((got - expected).abs());
    }
    verdict(
        worst <= LOGIT_TOLERANCE && floored_rows > 0,
        format!("{LOGIT_FIXTURES} row sets, max |diff| {worst:.3e} (tol {LOGIT_TOLERANCE:e}), {floored_rows} floored rows"),
    )
}

fn all_rates(report: &BenchmarkReport) -> Vec<f64> {
    let mut out: Vec<f64> = report.subsets.iter().map(|s| s.accuracy).collect();
    if let Some(w) = &report.winoground {
        out.extend([w.text, w.image, w.group]);
    }
    out
}

fn oracle_end_to_end() -> Verdict {
    let ws = workspace(ORACLE_ITEMS, ORACLE_ITEMS);
    let run = |backend: &str| {
        let config = ws.config(Mode::ContrastiveZeroShot, vec![mock(backend, ModelKind::Embedding, backend)]);
        evaluate(&config, &MockRegistry::new()).ok().and_then(|mut o| o.reports.pop())
    };
    let start = Instant::now();
    let (Some(oracle), Some(anti)) = (run("oracle"), run("anti-oracle")) else {
        return Verdict::Fail("evaluation failed".into());
    };
    let elapsed = start.elapsed();
    let oracle_ok = oracle.subsets.len() == 11 && all_rates(&oracle).iter().all(|&r| r == 1.0);
    let anti_ok = anti.subsets.len() == 11 && all_rates(&anti).iter().all(|&r| r == 0.0);
    let sizes_ok = oracle.subsets.iter().all(|s| s.total == ORACLE_ITEMS)
        && oracle.winoground.as_ref().map(|w| w.items) == Some(ORACLE_ITEMS);
    verdict(
        oracle_ok && anti_ok && sizes_ok && elapsed < ORACLE_BUDGET,
        format!(
            "11 subsets x {ORACLE_ITEMS} + {ORACLE_ITEMS} Winoground: oracle all 1.000 = {oracle_ok}, anti-oracle all 0.000 = {anti_ok}, {:.2}s (budget {}s)",
            elapsed.as_secs_f64(),
            ORACLE_BUDGET.as_secs()
        ),
    )
}

fn pooled_accuracy(report: &BenchmarkReport) -> f64 {
    let (c, n) = report.subsets.iter().fold((0, 0), |(c, n), s| (c + s.correct, n + s.total));
    c as f64 / n as f64
}

fn order_gap() -> (Verdict, String) {
    let dir = tempfile::tempdir().unwrap();
    let items = order_shuffle_fixture(dir.path(), ORDER_ITEMS, 4).unwrap();
    let manifest = dir.path().join("order.jsonl");
    write_pairwise_manifest(std::fs::File::create(&manifest).unwrap(), &items).unwrap();
    let run = |backend: &str| {
        let mut config = RunConfig::new(
            Mode::ContrastiveZeroShot,
            vec![mock(backend, ModelKind::Embedding, backend)],
            vec![BenchmarkSpec { manifest: manifest.clone(), kind: None }],
            dir.path().join(backend),
        );
        config.concurrency = 4;
        pooled_accuracy(&evaluate(&config, &MockRegistry::new()).unwrap().reports[0])
    };
    let noisy = run("bag-of-words-noisy");
    let exact = run("bag-of-words");
    let ordered = run("ordered");
    let ok = (ORDER_BAND.0..=ORDER_BAND.1).contains(&noisy) && ordered == 1.0;
    let info = format!(
        "exact-invariance bag-of-words scores {exact:.3}: every permutation ties, and ties count as incorrect"
    );
    (
        verdict(
            ok,
            format!(
                "{ORDER_ITEMS} items: bag-of-words {noisy:.3} in [{}, {}], order-sensitive {ordered:.3}",
                ORDER_BAND.0, ORDER_BAND.1
            ),
        ),
        info,
    )
}

fn golden_item() -> PairItem {
    PairItem {
        item_id: "coco-17".into(),
        image: ImageRef::from_locator("query.png"),
        caption_pos: "the horse is eating the grass".into(),
        caption_neg: "the grass is eating the horse".into(),
        benchmark: Benchmark::Aro,
        subset: Subset::CocoOrder,
    }
}

fn golden_bank() -> Vec<LabeledDemonstration> {
    let d = |i: usize, a: &str, b: &str, label| LabeledDemonstration {
        image: ImageRef::from_locator(format!("demo{i}.png")),
        caption_a: a.into(),
        caption_b: b.into(),
        correct_label: label,
    };
    vec![
        d(0, "a red cup beside a blue plate", "a blue cup beside a red plate", Label::A),
        d(1, "a kite above the tree", "a tree above the kite", Label::B),
        d(2, "the cat sits under the table", "the cat sits on the table", Label::B),
        d(3, "a man rides a bike past a bus", "a bus rides a man past a bike", Label::A),
        d(4, "three apples and one pear", "one apple and three pears", Label::A),
    ]
}

fn prompt_goldens() -> Verdict {
    let item = golden_item();
    let bank = golden_bank();
    let query = FewShotQuery::for_item(&item, LabelMap::POSITIVE_AT_B);
    let one = render_fewshot_prompt(&select_demos(&bank, 1, 0).unwrap(), &query, 1).unwrap();
    let five = render_fewshot_prompt(&select_demos(&bank, 5, 0).unwrap(), &query, 5).unwrap();
    let cases = [
        ("zero-shot", render_zeroshot_choice_prompt(&item, LabelMap::POSITIVE_AT_A), include_str!("golden/zeroshot_choice.txt")),
        (
            "yes/no",
            render_winoground_yesno_prompt("a person with glasses next to a dog", &ImageRef::from_locator("w0.png")),
            include_str!("golden/winoground_yesno.txt"),
        ),
        ("1-shot", one.clone(), include_str!("golden/one_shot.txt")),
        ("5-shot", five.clone(), include_str!("golden/five_shot.txt")),
    ];
    let mismatched: Vec<&str> = cases.iter().filter(|(_, b, g)| b.render_text() != *g).map(|(n, _, _)| *n).collect();
    verdict(
        mismatched.is_empty() && five.image_count() == 6 && one.image_count() == 2,
        format!(
            "{} of 4 goldens byte-identical (mismatched: {mismatched:?}); 5-shot image slots = {}",
            4 - mismatched.len(),
            five.image_count()
        ),
    )
}

fn ab_balance() -> Verdict {
    let demos: Vec<Demonstration> = (0..BALANCE_DRAWS)
        .map(|k| Demonstration {
            image: ImageRef::from_locator(format!("d{k}.png")),
            caption_correct: format!("right {k}"),
            caption_wrong: format!("wrong {k}"),
            source: DemoSource::Real,
            objects: vec![],
            provenance: Provenance::default(),
        })
        .collect();
    let mut fractions = Vec::new();
    let mut reproducible = true;
    for seed in [0, 7, 42, 1234, u64::MAX] {
        let labels = assign_labels(&demos, seed).unwrap();
        reproducible &= labels == assign_labels(&demos, seed).unwrap();
        let at_a = labels.iter().filter(|l| l.correct_label == Label::A).count();
        fractions.push(at_a as f64 / BALANCE_DRAWS as f64);
    }
    let balanced = fractions.iter().all(|f| (BALANCE_BAND.0..=BALANCE_BAND.1).contains(f));
    verdict(
        balanced && reproducible,
        format!(
            "{BALANCE_DRAWS} draws x 5 seeds, fraction at A {:?} within [{}, {}], reproducible = {reproducible}",
            fractions.iter().map(|f| format!("{f:.4}")).collect::<Vec<_>>(),
            BALANCE_BAND.0,
            BALANCE_BAND.1
        ),
    )
}

fn dir_bytes(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    for entry in std::fs::read_dir(dir).unwrap().flatten() {
        let path = entry.path();
        let name = path.file_name().unwrap().to_string_lossy().into_owned();
        if path.is_dir() {
            for (k, v) in dir_bytes(&path) {
                out.insert(format!("{name}/{k}"), v);
            }
        } else {
            out.insert(name, std::fs::read(&path).unwrap());
        }
    }
    out
}

fn sweep_determinism() -> Verdict {
    let ws = workspace(3, 4);
    let syn = write_bank(ws.path(), "syn", DemoSource::Synthetic);
    let real = write_bank(ws.path(), "real", DemoSource::Real);
    let mut config = ws.config(Mode::GenerativeZeroShot, vec![mock("vlm", ModelKind::Generative, "oracle")]);
    config.seed = 99;
    config.sweep = Some(SweepGrid { shots: vec![0, 1, 5], banks: vec![syn, real] });
    let run = |out: &str, cache: &str| {
        let mut c = config.clone();
        c.output_dir = ws.path().join(out);
        c.cache_dir = Some(ws.path().join(cache));
        let outcome = run_sweep(&c, &MockRegistry::new()).unwrap();
        (outcome, dir_bytes(&c.output_dir))
    };
    let (first, a) = run("a", "cache-1");
    let (_, b) = run("b", "cache-2");
    let (warm, c) = run("c", "cache-1");
    let identical = a == b && a == c;
    let complete = first.all_completed() && first.cells.len() == 5;
    verdict(
        identical && complete && first.backend_calls > 0 && warm.backend_calls == 0,
        format!(
            "{} cells, {} files byte-identical across cold/cold/warm runs = {identical}; cold calls {}, warm calls {}",
            first.cells.len(),
            a.len(),
            first.backend_calls,
            warm.backend_calls
        ),
    )
}

fn forge_replay() -> Verdict {
    let lists: Vec<Vec<String>> = [
        ["dog", "umbrella", "bench", "lamp"],
        ["cat", "vase", "table", "window"],
        ["horse", "fence", "tree", "cloud"],
        ["cup", "spoon", "plate", "book"],
        ["kite", "boat", "rock", "bird"],
    ]
    .iter()
    .map(|l| l.iter().map(|s| s.to_string()).collect())
    .collect();
    let positive = |l: &[String]| format!("a {} and a {} near a {} and a {}", l[0], l[1], l[2], l[3]);
    let negative = |l: &[String]| format!("a {} and a {} near a {} and a {}", l[2], l[1], l[0], l[3]);
    let mut table = std::collections::HashMap::new();
    let mut expected_text = Vec::new();
    for l in &lists {
        let p_prompt = format!(
            "Generate a caption for an image which is made of 4 objects: {}. Can you combine them into a compositionally aware caption?",
            l.join(", ")
        );
        let n_prompt = format!(
            "Generate counter caption to this one, with the same objects in a different position/attribute: '{}'.",
            positive(l)
        );
        table.insert(p_prompt.clone(), vec![positive(l)]);
        table.insert(n_prompt.clone(), vec![negative(l)]);
        expected_text.extend([p_prompt, n_prompt]);
    }
    let text = ScriptedTextGen::from_table("text-model", table);
    let images = ScriptedImageGen::constant("image-model", png_bytes(2, 2));
    let dir = tempfile::tempdir().unwrap();
    let store = BankStore::new(dir.path().join("synthetic-5")).unwrap();
    let opts = ForgeOptions { clock: Clock::Fixed("2024-05-01T00:00:00Z".into()), ..ForgeOptions::default() };
    let bank = match build_synthetic_bank(&lists, &text, &images, 3, &store, &opts) {
        Ok(b) => b,
        Err(e) => return Verdict::Fail(format!("forge failed: {e}")),
    };
    let expected_images: Vec<String> = lists.iter().map(|l| positive(l)).collect();
    let prompts_ok = text.requests() == expected_text && images.requests() == expected_images;
    let round_trip = load_bank(store.dir()).map(|b| b == bank).unwrap_or(false);
    verdict(
        prompts_ok && round_trip && bank.demos.len() == 5,
        format!(
            "{} text + {} image prompts byte-identical = {prompts_ok}; bank round-trip lossless = {round_trip}",
            text.requests().len(),
            images.requests().len()
        ),
    )
}

fn smoke_config(dir: &Path, spec: ModelSpec, scoring: WinogroundScoring) -> RunConfig {
    let mut config = RunConfig::new(
        Mode::GenerativeZeroShot,
        vec![spec],
        vec![BenchmarkSpec { manifest: dir.join("winoground.jsonl"), kind: None }],
        dir.join(format!("smoke-{scoring:?}")),
    );
    config.winoground_scoring = scoring;
    config
}

fn smoke(spec: ModelSpec) -> Verdict {
    let ws = common::Workspace { pairs: vec![], ..workspace(0, SMOKE_ITEMS) };
    let mut details = Vec::new();
    let mut ok = true;
    for scoring in [WinogroundScoring::YesLogit, WinogroundScoring::BinaryYesNo] {
        let config = smoke_config(ws.path(), spec.clone(), scoring);
        match evaluate(&config, &MockRegistry::new()) {
            Ok(outcome) if outcome.all_completed() => {
                let r = &outcome.reports[0];
                let w = r.winoground.as_ref().unwrap();
                let unparseable = w.unparseable_probes as f64 / w.probes as f64;
                ok &= unparseable <= SMOKE_MAX_UNPARSEABLE && r.metadata.score_kind.is_some();
                details.push(format!(
                    "{scoring:?}: T/I/G {:.2}/{:.2}/{:.2}, unparseable {unparseable:.2}, score_kind {:?}",
                    w.text, w.image, w.group, r.metadata.score_kind
                ));
            }
            Ok(outcome) => {
                ok = false;
                details.push(format!("{scoring:?}: {}", outcome.failures[0].1));
            }
            Err(e) => {
                ok = false;
                details.push(format!("{scoring:?}: {e}"));
            }
        }
    }
    verdict(ok, details.join("; "))
}

fn remote_spec(name: &str, endpoint: &str, key_env: Option<String>) -> ModelSpec {
    ModelSpec {
        name: name.into(),
        kind: ModelKind::Generative,
        endpoint: endpoint.into(),
        capabilities: Capabilities::default(),
        decoding: Decoding { max_tokens: 256, ..Decoding::default() },
        api_key_env: key_env,
    }
}

fn live_smoke() -> Verdict {
    let (Ok(endpoint), Ok(model)) = (std::env::var("COMPBENCH_SMOKE_ENDPOINT"), std::env::var("COMPBENCH_SMOKE_MODEL"))
    else {
        return Verdict::Skip("set COMPBENCH_SMOKE_ENDPOINT, COMPBENCH_SMOKE_MODEL (and COMPBENCH_SMOKE_KEY_ENV) to run".into());
    };
    smoke(remote_spec(&model, &endpoint, std::env::var("COMPBENCH_SMOKE_KEY_ENV").ok()))
}

fn local_smoke() -> Verdict {
    let server = fake_vlm();
    smoke(remote_spec("local-vlm", &format!("{}/v1", server.base), None))
}

fn main() {
    let mut failed = 0;
    let mut report = |name: &str, v: Verdict| {
        let (tag, detail) = match v {
            Verdict::Pass(d) => ("PASS", d),
            Verdict::Fail(d) => {
                failed += 1;
                ("FAIL", d)
            }
            Verdict::Skip(d) => ("SKIP", d),
        };
        println!("{tag} {name}: {detail}");
    };
    report("scoring oracle equivalence", scoring_oracle());
    report("L_yes equivalence", l_yes_equivalence());
    report("oracle end-to-end", oracle_end_to_end());
    let (order, info) = order_gap();
    report("order-agnosticism gap", order);
    println!("     note: {info}");
    report("prompt goldens", prompt_goldens());
    report("A/B balance", ab_balance());
    report("sweep determinism and warm cache", sweep_determinism());
    report("demo-forge replay", forge_replay());
    report("smoke run, live endpoint", live_smoke());
    report("smoke run, local fake endpoint", local_smoke());
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
