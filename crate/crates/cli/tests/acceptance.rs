//! Acceptance suite. Prints one line per criterion and exits non-zero if a
//! blocking criterion fails.

use std::collections::BTreeSet;
use std::fs;
use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

use okie::anchor::{parse_group, render_group, AnchorScheme, GenerationOrder, Role};
use okie::codec::{
    build_stage2_input, build_stage2_target, parse_stage2_output, recover_instance, Sentence,
    SentinelId, Triple,
};
use okie::eval::{f1_percent, score_sentence};
use okie::harness::{
    build_training_pairs, import_corpus, Augmentation, CorpusFormat, ExtractionExample,
};

const C1_LIMIT: Duration = Duration::from_secs(1);
const C2_LIMIT: Duration = Duration::from_secs(30);
const C5_LIMIT: Duration = Duration::from_secs(60);
const C6_LIMIT: Duration = Duration::from_secs(10);
const F1_PERCENT_TOLERANCE: f64 = 0.05;
const F1_PERCENT_DENOMINATOR: f64 = 54.0;
const RANDOM_SCHEMES: usize = 1_000;
const SCORER_INSTANCES: usize = 500;
const FUZZED_TRIPLES: usize = 10_000;
const GPU_TARGET_F1: f64 = 52.9;
const GPU_TOLERANCE: f64 = 1.5;

const ELON_INPUT: &str = "Elon Musk, who is the CEO of Tesla, also founded SpaceX. With predicate founded, <id_0><id_1><id_2>. With predicate is the CEO of, <id_3><id_4><id_5>";
const ELON_TARGET: &str =
    "<id_0> Elon Musk <id_1> founded <id_2> SpaceX <id_3> Elon Musk <id_4> is the CEO of <id_5> Tesla";

/// (F1, printed F1%) cells of the published result tables.
const F1_PERCENT_CELLS: [(f64, f64); 14] = [
    (53.5, 99.07),
    (52.7, 97.6),
    (52.4, 97.03),
    (52.1, 96.4),
    (51.1, 94.6),
    (53.2, 98.5),
    (42.9, 79.4),
    (52.9, 97.9),
    (36.9, 68.5),
    (43.1, 79.8),
    (53.1, 98.3),
    (39.5, 73.2),
    (45.3, 83.8),
    (53.3, 98.7),
];

/// Cells whose printed F1% is not reproduced from the printed F1 within
/// tolerance. Any change to this set is a regression.
const KNOWN_OFF_CELLS: [f64; 5] = [52.1, 52.9, 36.9, 39.5, 45.3];

enum Verdict {
    Pass(String),
    /// Reported failure that does not block the build.
    Known(String),
    Fail(String),
    Skip(String),
}

type Check = Result<Verdict, String>;
type Criterion<'a> = (u8, &'static str, Box<dyn Fn() -> Check + 'a>);

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

fn okie(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_okie"))
        .args(args)
        .output()
        .expect("spawn okie")
}

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn run_ok(args: &[&str]) -> Result<String, String> {
    let out = okie(args);
    ensure(out.status.success(), || {
        format!(
            "okie {} exited {:?}: {}",
            args.first().unwrap_or(&""),
            out.status.code(),
            String::from_utf8_lossy(&out.stderr).trim()
        )
    })?;
    Ok(String::from_utf8_lossy(&out.stdout).into_owned())
}

fn within(elapsed: Duration, limit: Duration) -> Result<(), String> {
    ensure(elapsed < limit, || {
        format!("took {elapsed:?}, limit {limit:?}")
    })
}

fn triple(s: &str, p: &str, o: &str) -> Triple {
    Triple::new(s, p, o).expect("valid triple")
}

fn sentinel_ids(text: &str) -> Vec<u32> {
    let mut ids = Vec::new();
    let mut rest = text;
    while let Some(i) = rest.find("<id_") {
        rest = &rest[i + 4..];
        let end = rest.find('>').expect("closed sentinel");
        ids.push(rest[..end].parse().expect("numeric id"));
        rest = &rest[end..];
    }
    ids
}

// Criterion 1

fn criterion_1(tmp: &Path) -> Check {
    let out = tmp.join("c1.jsonl");
    let input = fixtures().join("elon.jsonl");
    let start = Instant::now();
    run_ok(&[
        "transform",
        "--input",
        input.to_str().unwrap(),
        "--anchors",
        "off",
        "--order",
        "SPO",
        "--out",
        out.to_str().unwrap(),
    ])?;
    let elapsed = start.elapsed();
    let text = fs::read_to_string(&out).map_err(|e| e.to_string())?;
    let lines: Vec<&str> = text.lines().collect();
    ensure(lines.len() == 1, || {
        format!("expected 1 line, got {}", lines.len())
    })?;
    let v: Value = serde_json::from_str(lines[0]).map_err(|e| e.to_string())?;
    ensure(v["input"] == ELON_INPUT, || {
        format!("input differs: {}", v["input"])
    })?;
    ensure(v["target"] == ELON_TARGET, || {
        format!("target differs: {}", v["target"])
    })?;
    let ids = sentinel_ids(v["target"].as_str().unwrap_or_default());
    ensure(ids == (0..6).collect::<Vec<_>>(), || {
        format!("target ids {ids:?}")
    })?;
    within(elapsed, C1_LIMIT)?;
    Ok(Verdict::Pass(format!(
        "input and target byte-exact, {elapsed:.0?}"
    )))
}

// Criterion 2

fn arrangements(n: usize, k: usize) -> Vec<Vec<usize>> {
    if k == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for prefix in arrangements(n, k - 1) {
        for i in 0..n {
            if !prefix.contains(&i) {
                let mut next = prefix.clone();
                next.push(i);
                out.push(next);
            }
        }
    }
    out
}

fn order_assignments(k: usize) -> Vec<Vec<GenerationOrder>> {
    let mut out = vec![vec![]];
    for _ in 0..k {
        out = out
            .into_iter()
            .flat_map(|prefix| {
                GenerationOrder::ALL.iter().map(move |&o| {
                    let mut next = prefix.clone();
                    next.push(o);
                    next
                })
            })
            .collect();
    }
    out
}

fn roundtrip_case(
    sentence: &Sentence,
    triples: &[Triple],
    scheme: &AnchorScheme,
    orders: &[GenerationOrder],
) -> Result<(), String> {
    let predicates: Vec<&str> = triples.iter().map(|t| t.predicate()).collect();
    let instance =
        build_stage2_input(sentence, &predicates, scheme, orders).map_err(|e| e.to_string())?;
    let k = triples.len() as u32;
    ensure(
        sentinel_ids(&instance.input_text) == (0..3 * k).collect::<Vec<_>>(),
        || format!("input sentinels not 0..{}: {}", 3 * k, instance.input_text),
    )?;
    let target = build_stage2_target(triples, &instance).map_err(|e| e.to_string())?;
    ensure(
        sentinel_ids(&target) == (0..3 * k).collect::<Vec<_>>(),
        || format!("target sentinels not 0..{}: {target}", 3 * k),
    )?;
    let decoded = parse_stage2_output(&target, &instance);
    ensure(
        decoded.triples == triples && decoded.warnings.is_empty(),
        || {
            format!(
                "round trip failed for {:?} under {orders:?}: {target}",
                instance.input_text
            )
        },
    )?;
    if scheme.is_anchored() {
        let recovered =
            recover_instance(&instance.input_text, sentence, scheme).map_err(|e| e.to_string())?;
        ensure(recovered == instance, || {
            "recovered instance differs".into()
        })?;
    }
    Ok(())
}

fn criterion_2() -> Check {
    let corpus = import_corpus(&fixtures().join("five.jsonl"), CorpusFormat::Jsonl)
        .map_err(|e| e.to_string())?;
    ensure(corpus.len() == 5, || {
        format!("fixture has {} sentences", corpus.len())
    })?;
    let schemes = [AnchorScheme::plain(), AnchorScheme::anchored()];
    let start = Instant::now();
    let mut cases = 0usize;
    for ex in &corpus {
        for k in 1..=3 {
            let assignments = order_assignments(k);
            for picks in arrangements(ex.triples.len(), k) {
                let triples: Vec<Triple> = picks.iter().map(|&i| ex.triples[i].clone()).collect();
                for scheme in &schemes {
                    for orders in &assignments {
                        roundtrip_case(&ex.sentence, &triples, scheme, orders)?;
                        cases += 1;
                    }
                    // Uniform orders given as a single broadcast order.
                    for order in GenerationOrder::ALL {
                        roundtrip_case(&ex.sentence, &triples, scheme, &[order])?;
                        cases += 1;
                    }
                }
            }
        }
    }
    let elapsed = start.elapsed();
    within(elapsed, C2_LIMIT)?;
    Ok(Verdict::Pass(format!(
        "{cases} exhaustive round trips, {elapsed:.1?}"
    )))
}

// Criterion 3

fn ids(start: u32) -> [SentinelId; 3] {
    [
        SentinelId(start),
        SentinelId(start + 1),
        SentinelId(start + 2),
    ]
}

fn random_token(rng: &mut ChaCha8Rng) -> String {
    const ALPHABET: &[u8] =
        b"abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789[]()_#*|";
    let len = rng.gen_range(1..=6);
    (0..len)
        .map(|_| *ALPHABET.choose(rng).expect("non-empty") as char)
        .collect()
}

fn criterion_3() -> Check {
    let letters = AnchorScheme::anchored_with(["S", "P", "O"], None).map_err(|e| e.to_string())?;
    let spo = render_group(ids(0), GenerationOrder::Spo, &letters).map_err(|e| e.to_string())?;
    ensure(spo == "S<id_0>S P<id_1>P O<id_2>O", || {
        format!("SPO rendered {spo}")
    })?;
    let pos = render_group(ids(0), GenerationOrder::Pos, &letters).map_err(|e| e.to_string())?;
    ensure(pos == "P<id_0>P O<id_1>O S<id_2>S", || {
        format!("POS rendered {pos}")
    })?;

    for scheme in [&letters, &AnchorScheme::anchored()] {
        let renderings: BTreeSet<String> = GenerationOrder::ALL
            .iter()
            .map(|&o| render_group(ids(0), o, scheme).map_err(|e| e.to_string()))
            .collect::<Result<_, _>>()?;
        ensure(renderings.len() == 6, || {
            format!("only {} distinct renderings", renderings.len())
        })?;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut checked = 0usize;
    let mut rejected = 0usize;
    while checked < RANDOM_SCHEMES {
        let text: [String; 3] = std::array::from_fn(|_| random_token(&mut rng));
        let tunable: Option<[String; 3]> = rng
            .gen_bool(0.5)
            .then(|| std::array::from_fn(|_| format!("<{}>", random_token(&mut rng))));
        let scheme = match AnchorScheme::anchored_with(
            [text[0].as_str(), text[1].as_str(), text[2].as_str()],
            tunable
                .as_ref()
                .map(|t| [t[0].as_str(), t[1].as_str(), t[2].as_str()]),
        ) {
            Ok(s) => s,
            Err(_) => {
                rejected += 1;
                continue;
            }
        };
        let unit = |role: Role| {
            let i = role.index();
            format!(
                "{}{}",
                text[i],
                tunable.as_ref().map_or("", |t| t[i].as_str())
            )
        };
        let start = rng.gen_range(0..50u32);
        for order in GenerationOrder::ALL {
            let group = render_group(ids(start), order, &scheme).map_err(|e| e.to_string())?;
            let pieces: Vec<&str> = group.split(' ').collect();
            ensure(pieces.len() == 3, || {
                format!("group {group:?} has {} pieces", pieces.len())
            })?;
            for (i, (piece, role)) in pieces.iter().zip(order.roles()).enumerate() {
                let u = unit(role);
                let expected = format!("{u}<id_{}>{u}", start + i as u32);
                ensure(*piece == expected, || {
                    format!("{piece:?} != {expected:?} in {group:?}")
                })?;
            }
            let parsed = parse_group(&group, &scheme).map_err(|e| e.to_string())?;
            let roles: Vec<Option<Role>> = parsed.iter().map(|e| e.role).collect();
            ensure(roles == order.roles().map(Some), || {
                format!("parse of {group:?} gave {roles:?}")
            })?;
        }
        checked += 1;
    }
    Ok(Verdict::Pass(format!(
        "printed groups byte-exact, 6 distinct renderings, flanking symmetric on {checked} random schemes ({rejected} invalid draws rejected)"
    )))
}

// Criterion 4

fn criterion_4() -> Check {
    let reference = F1_PERCENT_DENOMINATOR / 100.0;
    let mut off = Vec::new();
    let mut lines = Vec::new();
    for (f1, printed) in F1_PERCENT_CELLS {
        let ours = f1_percent(f1 / 100.0, reference).map_err(|e| e.to_string())?;
        if (ours - printed).abs() > F1_PERCENT_TOLERANCE + 1e-9 {
            // Which printed values survive if the printed F1 was itself rounded.
            let lo = 100.0 * (f1 - 0.05) / F1_PERCENT_DENOMINATOR;
            let hi = 100.0 * (f1 + 0.05) / F1_PERCENT_DENOMINATOR;
            let explained = printed >= lo - 0.05 && printed <= hi + 0.05;
            lines.push(format!(
                "    cell F1 {f1}: computed {ours:.1}, printed {printed}, exact {:.3}; {}",
                100.0 * f1 / F1_PERCENT_DENOMINATOR,
                if explained {
                    "consistent with an unrounded F1 behind the printed one"
                } else {
                    "not consistent with the printed F1 under any rounding"
                }
            ));
            off.push(f1);
        }
    }
    let summary = format!(
        "{}/{} cells within ±{F1_PERCENT_TOLERANCE}",
        F1_PERCENT_CELLS.len() - off.len(),
        F1_PERCENT_CELLS.len()
    );
    let detail = if lines.is_empty() {
        summary
    } else {
        format!("{summary}; outside tolerance:\n{}", lines.join("\n"))
    };
    if off.is_empty() {
        Ok(Verdict::Pass(detail))
    } else if off == KNOWN_OFF_CELLS {
        Ok(Verdict::Known(detail))
    } else {
        Ok(Verdict::Fail(detail))
    }
}

// Criterion 5

fn oracle_tokens(text: &str) -> Vec<String> {
    let mut tokens: Vec<String> = text
        .split_whitespace()
        .map(|t| {
            let chars: Vec<char> = t.chars().collect();
            let a = chars.iter().position(|c| c.is_alphanumeric());
            let b = chars.iter().rposition(|c| c.is_alphanumeric());
            match (a, b) {
                (Some(a), Some(b)) => chars[a..=b].iter().collect::<String>().to_lowercase(),
                _ => String::new(),
            }
        })
        .filter(|t| !t.is_empty())
        .collect();
    tokens.sort();
    tokens
}

/// Size of the multiset intersection of two sorted token lists.
fn sorted_overlap(a: &[String], b: &[String]) -> usize {
    let (mut i, mut j, mut n) = (0, 0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                n += 1;
                i += 1;
                j += 1;
            }
        }
    }
    n
}

fn oracle_match(pred: &Triple, gold: &Triple) -> (f64, f64) {
    let fields = |t: &Triple| {
        [
            t.subject().to_string(),
            t.predicate().to_string(),
            t.object().to_string(),
        ]
    };
    let (pf, gf) = (fields(pred), fields(gold));
    let (mut m, mut pt, mut gt) = (0, 0, 0);
    for i in 0..3 {
        let (a, b) = (oracle_tokens(&pf[i]), oracle_tokens(&gf[i]));
        m += sorted_overlap(&a, &b);
        pt += a.len();
        gt += b.len();
    }
    let ratio = |n: usize, d: usize| if d == 0 { 0.0 } else { n as f64 / d as f64 };
    (ratio(m, pt), ratio(m, gt))
}

/// Best total precision over every injective map from predictions to golds.
fn brute_force_precision(preds: &[Triple], golds: &[Triple]) -> f64 {
    if preds.is_empty() {
        return 1.0;
    }
    fn best(row: usize, used: &mut Vec<bool>, w: &[Vec<f64>]) -> f64 {
        if row == w.len() {
            return 0.0;
        }
        let mut top = best(row + 1, used, w);
        for g in 0..used.len() {
            if !used[g] {
                used[g] = true;
                top = top.max(w[row][g] + best(row + 1, used, w));
                used[g] = false;
            }
        }
        top
    }
    let w: Vec<Vec<f64>> = preds
        .iter()
        .map(|p| golds.iter().map(|g| oracle_match(p, g).0).collect())
        .collect();
    best(0, &mut vec![false; golds.len()], &w) / preds.len() as f64
}

fn oracle_recall(preds: &[Triple], golds: &[Triple]) -> f64 {
    if golds.is_empty() {
        return 1.0;
    }
    golds
        .iter()
        .map(|g| {
            preds
                .iter()
                .map(|p| oracle_match(p, g).1)
                .fold(0.0, f64::max)
        })
        .sum::<f64>()
        / golds.len() as f64
}

const WORDS: [&str; 12] = [
    "Elon", "Musk", "founded", "SpaceX", "the", "CEO", "of", "Tesla", "in", "2002", "is", "a",
];

fn random_phrase(rng: &mut ChaCha8Rng, vocab: &[&str]) -> String {
    let len = rng.gen_range(1..=4);
    let mut words: Vec<String> = (0..len)
        .map(|_| vocab.choose(rng).expect("non-empty").to_string())
        .collect();
    // Occasional punctuation and case noise.
    if rng.gen_bool(0.2) {
        words[0] = words[0].to_uppercase();
    }
    if rng.gen_bool(0.2) {
        words.last_mut().expect("non-empty").push(',');
    }
    words.join(" ")
}

fn random_triple(rng: &mut ChaCha8Rng, vocab: &[&str]) -> Triple {
    triple(
        &random_phrase(rng, vocab),
        &random_phrase(rng, vocab),
        &random_phrase(rng, vocab),
    )
}

fn criterion_5() -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut instances = 0usize;
    // Every shape up to 3 x 3, repeated until the instance budget is met.
    while instances < SCORER_INSTANCES {
        for n in 0..=3 {
            for m in 0..=3 {
                let vocab = &WORDS[..rng.gen_range(3..=WORDS.len())];
                let preds: Vec<Triple> = (0..n).map(|_| random_triple(&mut rng, vocab)).collect();
                let golds: Vec<Triple> = (0..m).map(|_| random_triple(&mut rng, vocab)).collect();
                let s = score_sentence(&preds, &golds);
                let bp = brute_force_precision(&preds, &golds);
                let br = oracle_recall(&preds, &golds);
                ensure((s.precision - bp).abs() < 1e-9, || {
                    format!(
                        "precision {} vs brute force {bp} on {preds:?} / {golds:?}",
                        s.precision
                    )
                })?;
                ensure((s.recall - br).abs() < 1e-9, || {
                    format!(
                        "recall {} vs oracle {br} on {preds:?} / {golds:?}",
                        s.recall
                    )
                })?;
                instances += 1;
            }
        }
    }

    let pool: Vec<Triple> = (0..FUZZED_TRIPLES)
        .map(|_| random_triple(&mut rng, &WORDS))
        .collect();
    let mut reflexive = 0usize;
    for chunk in pool.chunks(4) {
        let s = score_sentence(chunk, chunk);
        ensure(s.precision == 1.0 && s.recall == 1.0, || {
            format!("score(X, X) = ({}, {}) on {chunk:?}", s.precision, s.recall)
        })?;
        reflexive += 1;
    }
    for pair in pool.chunks(2) {
        let (p, g) = (&pair[..1], &pair[1..]);
        let s = score_sentence(p, g);
        for v in [s.precision, s.recall] {
            ensure((0.0..=1.0).contains(&v), || {
                format!("score {v} out of bounds on {pair:?}")
            })?;
        }
    }
    let elapsed = start.elapsed();
    within(elapsed, C5_LIMIT)?;
    Ok(Verdict::Pass(format!(
        "{instances} instances match brute force, {} fuzzed triples bounded, {reflexive} reflexive sets, {elapsed:.1?}",
        pool.len()
    )))
}

// Criterion 6

fn criterion_6(tmp: &Path) -> Check {
    let gold = fixtures().join("gold50.jsonl");
    let text = fixtures().join("gold50.txt");
    let start = Instant::now();
    let mut modes = Vec::new();
    for (name, extra) in [
        ("fixed SPO", vec!["--order", "SPO"]),
        ("vote", vec!["--vote"]),
    ] {
        let pred = tmp.join(format!("c6_{}.jsonl", extra[0].trim_start_matches('-')));
        let report = tmp.join(format!("c6_{}.json", extra[0].trim_start_matches('-')));
        let mut args = vec![
            "extract",
            "--backend",
            "mock",
            "--gold",
            gold.to_str().unwrap(),
            "--input",
            text.to_str().unwrap(),
            "--out",
            pred.to_str().unwrap(),
        ];
        args.extend(extra);
        run_ok(&args)?;
        run_ok(&[
            "score",
            "--gold",
            gold.to_str().unwrap(),
            "--pred",
            pred.to_str().unwrap(),
            "--report",
            report.to_str().unwrap(),
        ])?;
        let v: Value =
            serde_json::from_str(&fs::read_to_string(&report).map_err(|e| e.to_string())?)
                .map_err(|e| e.to_string())?;
        ensure(
            v["per_sentence"].as_array().map(Vec::len) == Some(50),
            || "report does not cover 50 sentences".into(),
        )?;
        for key in ["precision", "recall", "f1"] {
            ensure(v[key].as_f64() == Some(1.0), || {
                format!("{name}: {key} = {}", v[key])
            })?;
        }
        modes.push(name);
    }
    let elapsed = start.elapsed();
    within(elapsed, C6_LIMIT)?;
    Ok(Verdict::Pass(format!(
        "P = R = F1 = 1.0 under {}, {elapsed:.1?}",
        modes.join(" and ")
    )))
}

// Criterion 7

fn synthetic_corpus(path: &Path, n: usize) -> Result<(), String> {
    let mut f = std::io::BufWriter::new(fs::File::create(path).map_err(|e| e.to_string())?);
    for k in 0..n {
        let entity = format!("Entity {k}");
        let mut triples = vec![serde_json::json!({
            "subject": entity, "predicate": "was registered in", "object": format!("region {}", k % 97)
        })];
        if k % 3 == 0 {
            triples.push(serde_json::json!({
                "subject": entity, "predicate": "trades with", "object": format!("Entity {}", (k * 7 + 1) % n)
            }));
        }
        if k % 5 == 0 {
            triples.push(serde_json::json!({
                "subject": entity, "predicate": "was registered in", "object": format!("year {}", 1900 + k % 120)
            }));
        }
        let line = serde_json::json!({
            "sentence": format!("Entity {k}, registered in region {}, trades widely.", k % 97),
            "triples": triples,
        });
        writeln!(f, "{line}").map_err(|e| e.to_string())?;
    }
    f.flush().map_err(|e| e.to_string())
}

fn criterion_7(tmp: &Path) -> Check {
    let corpus = tmp.join("c7_corpus.jsonl");
    synthetic_corpus(&corpus, 100_000)?;
    let sample = |seed: &str, name: &str| -> Result<String, String> {
        let out = tmp.join(name);
        run_ok(&[
            "sample",
            "--fraction",
            "0.009",
            "--seed",
            seed,
            "--input",
            corpus.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ])?;
        fs::read_to_string(&out).map_err(|e| e.to_string())
    };
    let a = sample("0", "c7_a.jsonl")?;
    let b = sample("0", "c7_b.jsonl")?;
    let c = sample("1", "c7_c.jsonl")?;
    ensure(a.lines().count() == 900, || {
        format!("sample has {} lines", a.lines().count())
    })?;
    ensure(a == b, || "same seed gave different samples".into())?;
    ensure(a != c, || "different seeds gave identical samples".into())?;

    let picked =
        import_corpus(&tmp.join("c7_a.jsonl"), CorpusFormat::Jsonl).map_err(|e| e.to_string())?;
    let scheme = AnchorScheme::anchored();
    let pairs = build_training_pairs(&picked, &scheme, Augmentation::AllOrders)
        .map_err(|e| e.to_string())?;
    ensure(pairs.stage2.len() == 5_400, || {
        format!("{} stage-2 pairs", pairs.stage2.len())
    })?;
    for pair in &pairs.stage2 {
        let ex: &ExtractionExample = &picked[pair.example];
        let instance =
            recover_instance(&pair.input, &ex.sentence, &scheme).map_err(|e| e.to_string())?;
        let decoded = parse_stage2_output(&pair.target, &instance);
        ensure(
            decoded.triples == ex.triples && decoded.warnings.is_empty(),
            || format!("pair of example {} does not round-trip", pair.example),
        )?;
        ensure(
            instance
                .predicate_slots
                .iter()
                .all(|s| Some(s.order) == pair.order),
            || format!("pair of example {} lost its order", pair.example),
        )?;
    }
    Ok(Verdict::Pass(
        "900 of 100000 sampled, deterministic per seed; 5400 stage-2 pairs all round-trip".into(),
    ))
}

// Criterion 8

fn criterion_8(tmp: &Path) -> Check {
    let runs = tmp.join("c8_runs");
    let config = tmp.join("c8.toml");
    let gold = fixtures().join("gold50.jsonl");
    fs::write(
        &config,
        format!(
            "label = \"OK-IE\"\nfraction = 0.2\nseeds = [0, 1]\nbackend = \"mock\"\nablation = true\n\
             train = {:?}\neval = {:?}\nruns_dir = {:?}\n",
            gold, gold, runs
        ),
    )
    .map_err(|e| e.to_string())?;
    let stdout = run_ok(&["train", "--config", config.to_str().unwrap()])?;
    let header: Vec<&str> = stdout
        .lines()
        .next()
        .unwrap_or_default()
        .split_whitespace()
        .collect();
    ensure(header == ["Approach", "F1*", "F1"], || {
        format!("table header {header:?}")
    })?;

    let table: Value = serde_json::from_str(
        &fs::read_to_string(runs.join("ablation.json")).map_err(|e| e.to_string())?,
    )
    .map_err(|e| e.to_string())?;
    let rows = table["rows"].as_array().cloned().unwrap_or_default();
    ensure(rows.len() == 4, || format!("{} ablation rows", rows.len()))?;
    let mut cells = BTreeSet::new();
    for row in &rows {
        for key in ["f1_star", "f1"] {
            ensure(row[key].as_f64() == Some(1.0), || {
                format!("{key} = {} in {row}", row[key])
            })?;
        }
        cells.insert((
            row["anchored"].to_string(),
            row["augmentation"]["kind"].to_string(),
        ));
    }
    ensure(cells.len() == 4, || {
        "ablation cells are not the full 2 x 2 grid".into()
    })?;
    ensure(stdout.lines().count() == 5, || {
        format!("rendered table:\n{stdout}")
    })?;
    Ok(Verdict::Pass(
        "2 x 2 grid rendered with F1* and F1 populated (1.0 under the oracle)".into(),
    ))
}

// Criterion 9

fn criterion_9(tmp: &Path) -> Check {
    let (Ok(model), Ok(train), Ok(eval)) = (
        std::env::var("OKIE_ACCEPTANCE_MODEL"),
        std::env::var("OKIE_ACCEPTANCE_TRAIN"),
        std::env::var("OKIE_ACCEPTANCE_EVAL"),
    ) else {
        return Ok(Verdict::Skip(
            "optional GPU run; set OKIE_ACCEPTANCE_MODEL, OKIE_ACCEPTANCE_TRAIN and OKIE_ACCEPTANCE_EVAL (plus OKIE_MODEL_DIR) to enable".into(),
        ));
    };
    let config = tmp.join("c9.json");
    let job = serde_json::json!({
        "label": "OK-IE",
        "fraction": 1.0,
        "seeds": [0],
        "backend": model,
        "train": train,
        "eval": eval,
        "runs_dir": tmp.join("c9_runs"),
    });
    fs::write(&config, job.to_string()).map_err(|e| e.to_string())?;
    let start = Instant::now();
    let out = okie(&["train", "--config", config.to_str().unwrap()]);
    let elapsed = start.elapsed();
    if !out.status.success() {
        return Ok(Verdict::Known(format!(
            "training run failed: {}",
            String::from_utf8_lossy(&out.stderr).trim()
        )));
    }
    let stdout = String::from_utf8_lossy(&out.stdout);
    let f1 = stdout
        .split("  F1 ")
        .nth(1)
        .and_then(|s| s.split_whitespace().next())
        .and_then(|s| s.parse::<f64>().ok())
        .ok_or_else(|| format!("no F1 in output {stdout:?}"))?;
    let detail = format!("F1 {f1:.1} (target {GPU_TARGET_F1} ± {GPU_TOLERANCE}), {elapsed:.0?}");
    if (f1 - GPU_TARGET_F1).abs() <= GPU_TOLERANCE {
        Ok(Verdict::Pass(detail))
    } else {
        Ok(Verdict::Known(detail))
    }
}

fn main() {
    let tmp = tempfile::tempdir().expect("temp dir");
    let t = tmp.path();
    let criteria: Vec<Criterion<'_>> = vec![
        (1, "worked example bit-exact", Box::new(|| criterion_1(t))),
        (2, "codec round-trip exhaustive", Box::new(criterion_2)),
        (3, "anchor templates", Box::new(criterion_3)),
        (4, "F1% arithmetic", Box::new(criterion_4)),
        (5, "scorer oracle equivalence", Box::new(criterion_5)),
        (6, "end-to-end oracle identity", Box::new(|| criterion_6(t))),
        (7, "harness arithmetic", Box::new(|| criterion_7(t))),
        (8, "ablation scaffolding", Box::new(|| criterion_8(t))),
        (9, "optional GPU reproduction", Box::new(|| criterion_9(t))),
    ];

    let mut blocking_failures = 0;
    for (n, name, check) in &criteria {
        let verdict = match catch_unwind(AssertUnwindSafe(check)) {
            Ok(Ok(v)) => v,
            Ok(Err(msg)) => Verdict::Fail(msg),
            Err(_) => Verdict::Fail("panicked".into()),
        };
        let (status, detail) = match verdict {
            Verdict::Pass(d) => ("PASS", d),
            Verdict::Known(d) => ("FAIL (reported, non-blocking)", d),
            Verdict::Fail(d) => {
                blocking_failures += 1;
                ("FAIL", d)
            }
            Verdict::Skip(d) => ("SKIP", d),
        };
        println!("criterion {n} [{name}]: {status}: {detail}");
    }
    if blocking_failures > 0 {
        eprintln!("{blocking_failures} acceptance criteria failed");
        std::process::exit(1);
    }
}
