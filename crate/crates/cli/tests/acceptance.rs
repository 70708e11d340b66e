//! Acceptance suite. Each criterion prints one `PASS` or `FAIL` line; the
//! process exits nonzero if any gating criterion fails.
//!
//! Oracles here are written independently of the library code they check:
//! brute-force cloze enumeration, a hand-rolled bigram probability, a
//! Simpson-rule Student t tail and a direct Pearson formula.

use std::collections::BTreeMap;
use std::path::Path;
use std::process::Command;
use std::sync::Arc;
use std::time::Instant;

use icprobe::backend::{
    make_planted_backend, AttachmentMode, AttachmentPlant, Backend, BigramModel, ContextPattern, LmBackend,
    PlantConfig, PlantSpec, ProbRule, ReferentialPlant, Tokenizer, UniformModel, WordTokenizer, EOS,
};
use icprobe::experiments::{self, Model, RunOptions};
use icprobe::lexicon::{filter_by_vocabulary, BiasCategory, LexiconBundle, Vocabulary};
use icprobe::measures::{self, FormClass, MeasurementRecord};
use icprobe::report::config::Config;
use icprobe::report::{commands, RunManifest};
use icprobe::stats::{self, Coding, Factor, ModelSpec, OnAliased, TTestSpec};
use icprobe::stimgen::{self, GenderCondition, StimulusSet};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn s<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_icprobe")
}

// ---------------------------------------------------------------------------
// Stimulus counts

fn stimulus_counts() -> Outcome {
    let dir = tempfile::tempdir().map_err(s)?;
    let mut got = Vec::new();
    for (kind, condition, expected) in [
        ("referential", Some("mismatch"), 6888),
        ("referential", Some("match"), 6888),
        ("completion", None, 112),
        ("rc_reading", None, 192),
    ] {
        let out = dir.path().join(format!("{kind}-{}.jsonl", condition.unwrap_or("all")));
        let mut cmd = Command::new(bin());
        cmd.args(["gen", "--kind", kind]).arg("--out").arg(&out);
        if let Some(c) = condition {
            cmd.args(["--condition", c]);
        }
        let status = cmd.output().map_err(s)?;
        ensure(status.status.code() == Some(0), || {
            format!("gen {kind} exited {:?}: {}", status.status.code(), String::from_utf8_lossy(&status.stderr))
        })?;
        let set = StimulusSet::from_jsonl(&std::fs::read_to_string(&out).map_err(s)?).map_err(s)?;
        let records = std::fs::read_to_string(&out).map_err(s)?.lines().count() - 1;
        ensure(set.len() == expected && records == expected, || {
            format!("{kind}/{condition:?}: {} stimuli, {records} lines, expected {expected}", set.len())
        })?;
        got.push(set.len());
    }
    Ok(format!("referential {}/{} per condition, completion {}, reading {}", got[0], got[1], got[2], got[3]))
}

// ---------------------------------------------------------------------------
// Bias categorization

fn bias_categorization() -> Outcome {
    let lex = LexiconBundle::bundled();
    let set = stimgen::gen_referential(&lex.norms, &lex.pairs, GenderCondition::Mismatch).map_err(s)?;
    for (lemma, past, score, cat) in [
        ("amuse", "amused", 67.0, BiasCategory::SubjectBiased),
        ("applaud", "applauded", -84.0, BiasCategory::ObjectBiased),
    ] {
        let n = lex
            .norms
            .iter()
            .find(|n| n.lemma == lemma)
            .ok_or_else(|| format!("{lemma} not among in-vocabulary norms"))?;
        ensure(n.bias_score == score && n.past_form == past && n.bias_category() == cat, || {
            format!("{lemma}: score {} category {}", n.bias_score, n.bias_category())
        })?;
        let tagged: Vec<_> = set.stimuli.iter().filter(|st| st.words[2] == past).collect();
        ensure(!tagged.is_empty(), || format!("no stimuli use `{past}`"))?;
        ensure(tagged.iter().all(|st| st.condition("bias_category") == Some(cat.as_str())), || {
            format!("stimuli with `{past}` not all {}", cat.as_str())
        })?;
    }
    Ok("amused (67) subject_biased, applauded (-84) object_biased".into())
}

// ---------------------------------------------------------------------------
// Surprisal identities

fn random_sentence(rng: &mut ChaCha8Rng, words: &[String]) -> Vec<String> {
    let len = rng.random_range(1..=15);
    (0..len).map(|_| words[rng.random_range(0..words.len())].clone()).collect()
}

fn surprisal_identities() -> Outcome {
    let lex = LexiconBundle::bundled();
    let vocab = lex.vocabulary.clone();
    let v = vocab.len();
    let uniform = LmBackend::new(
        "uniform",
        Arc::new(WordTokenizer::new(vocab.clone())),
        Box::new(UniformModel::new(v, 2, 8, 0)),
        Some(0),
    )
    .map_err(s)?;
    let expected = (v as f64).log2();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let words = vocab.words().to_vec();
    for _ in 0..1000 {
        let seq = random_sentence(&mut rng, &words);
        for x in uniform.surprisals(&seq).map_err(s)? {
            ensure(x == expected, || format!("uniform surprisal {x} != log2 {v} = {expected}"))?;
        }
    }

    // Bigram with an explicit end token, trained on random sentences; the
    // oracle recomputes each conditional from raw counts.
    let mut inv = Vocabulary::from_words([EOS]);
    for w in &words {
        inv.insert(w.clone());
    }
    let tok = WordTokenizer::new(inv.clone());
    let corpus: Vec<Vec<usize>> = (0..300)
        .map(|_| random_sentence(&mut rng, &words).iter().map(|w| inv.id(w).unwrap()).collect())
        .collect();
    let alpha = 0.05;
    let n = inv.len();
    let model = BigramModel::train(n, &corpus, 0, alpha, 2, 8, 0);
    let mut counts = vec![vec![0.0f64; n]; n + 1];
    for sent in &corpus {
        let mut prev = n;
        for &t in sent.iter().chain(std::iter::once(&0)) {
            counts[prev][t] += 1.0;
            prev = t;
        }
    }
    let bigram = LmBackend::new("bigram", Arc::new(tok), Box::new(model), Some(0)).map_err(s)?;
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let seq = random_sentence(&mut rng, &words);
        let sum: f64 = bigram.surprisals(&seq).map_err(s)?.iter().sum();
        let joint = bigram.joint_log2_prob(&seq).map_err(s)?;
        let mut oracle = 0.0;
        let mut prev = n;
        for w in &seq {
            let t = inv.id(w).unwrap();
            let total: f64 = counts[prev].iter().sum();
            oracle -= ((counts[prev][t] + alpha) / (total + alpha * n as f64)).log2();
            prev = t;
        }
        let rel = |a: f64, b: f64| (a - b).abs() / b.abs().max(1e-300);
        worst = worst.max(rel(sum, -joint)).max(rel(sum, oracle));
        ensure(rel(sum, -joint) <= 1e-6 && rel(sum, oracle) <= 1e-6, || {
            format!("chain rule: sum {sum} joint {} oracle {oracle}", -joint)
        })?;
    }
    Ok(format!("uniform = log2 {v} exactly; chain rule worst relative error {worst:.1e} over 1000 sequences"))
}

// ---------------------------------------------------------------------------
// Pearson properties

fn pearson_oracle(v: &[f64], w: &[f64]) -> f64 {
    let n = v.len() as f64;
    let (sv, sw): (f64, f64) = (v.iter().sum(), w.iter().sum());
    let svw: f64 = v.iter().zip(w).map(|(a, b)| a * b).sum();
    let svv: f64 = v.iter().map(|a| a * a).sum();
    let sww: f64 = w.iter().map(|b| b * b).sum();
    (n * svw - sv * sw) / ((n * svv - sv * sv).sqrt() * (n * sww - sw * sw).sqrt())
}

fn pearson_properties() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut worst_affine = 0.0f64;
    for _ in 0..10_000 {
        let n = rng.random_range(2..64);
        let v: Vec<f64> = (0..n).map(|_| rng.random_range(-10.0..10.0)).collect();
        let w: Vec<f64> = (0..n).map(|_| rng.random_range(-10.0..10.0)).collect();
        let r = measures::pearson_r(&v, &w).map_err(s)?;
        let rt = measures::pearson_r(&w, &v).map_err(s)?;
        let a = rng.random_range(0.01..100.0);
        let b = rng.random_range(-100.0..100.0);
        let va: Vec<f64> = v.iter().map(|x| a * x + b).collect();
        let ra = measures::pearson_r(&va, &w).map_err(s)?;
        let rv = measures::pearson_r(&v, &v).map_err(s)?;
        ensure(r == rt, || format!("asymmetric: {r} vs {rt}"))?;
        ensure((-1.0..=1.0).contains(&r), || format!("out of bounds: {r}"))?;
        worst_affine = worst_affine.max((r - ra).abs());
        ensure((r - ra).abs() <= 1e-10, || format!("affine: {r} vs {ra} (a={a}, b={b})"))?;
        ensure((rv - 1.0).abs() <= 1e-10, || format!("r(v,v) = {rv}"))?;
        let o = pearson_oracle(&v, &w);
        ensure((r - o).abs() <= 1e-9, || format!("oracle: {r} vs {o}"))?;
    }
    Ok(format!("10000 pairs; worst affine deviation {worst_affine:.1e}"))
}

// ---------------------------------------------------------------------------
// Cloze oracle

fn cloze_oracle() -> Outcome {
    let lex = LexiconBundle::bundled();
    let prompts = stimgen::gen_completion(&lex.completion).map_err(s)?;
    let sg_forms: Vec<String> = lex.verb_forms.forms(FormClass::Singular).into_iter().map(String::from).collect();
    let pl_forms: Vec<String> = lex.verb_forms.forms(FormClass::Plural).into_iter().map(String::from).collect();
    let amb_forms: Vec<String> = lex.verb_forms.forms(FormClass::Ambiguous).into_iter().map(String::from).collect();
    let words = lex.vocabulary.words().to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let mut compared = 0;
    for plant in 0..100 {
        // Random listed words: some of each verb class plus arbitrary words.
        let mut listed: BTreeMap<String, f64> = BTreeMap::new();
        for pool in [&sg_forms, &pl_forms, &amb_forms, &words] {
            for _ in 0..rng.random_range(0..6) {
                let w = &pool[rng.random_range(0..pool.len())];
                if lex.vocabulary.contains(w) {
                    listed.insert(w.clone(), rng.random_range(0.01..1.0));
                }
            }
        }
        let mass = rng.random_range(0.2..0.95);
        let total: f64 = listed.values().sum();
        let probs: Vec<(String, f64)> = listed.into_iter().map(|(w, p)| (w, p / total * mass)).collect();
        let spec = PlantSpec {
            prob_rules: vec![ProbRule {
                when: ContextPattern::new().with(-1, ["who"]),
                probs,
            }],
            hidden_rules: Vec::new(),
            jitter: rng.random_range(0.0..1.5),
            noise: 0.0,
            n_layers: 1,
            hidden_dim: 2,
            seed: plant,
        };
        let b = make_planted_backend("planted", lex.vocabulary.clone(), &spec).map_err(s)?;
        let k = [1, 5, 20, 100, 250, words.len() + 10][rng.random_range(0..6)];
        for st in prompts.stimuli.iter().step_by(7) {
            // Brute force over the full vocabulary.
            let dist = b.next_distribution(&st.words).map_err(s)?;
            let mut ranked: Vec<(usize, f64)> = (0..words.len()).map(|i| (i, dist.probs[i])).collect();
            ranked.sort_by(|x, y| y.1.total_cmp(&x.1).then(x.0.cmp(&y.0)));
            let (mut sg, mut pl) = (0.0, 0.0);
            for &(i, p) in ranked.iter().take(k) {
                let w = &words[i];
                if sg_forms.contains(w) {
                    sg += p;
                } else if pl_forms.contains(w) {
                    pl += p;
                }
            }
            // The same probabilities via the surprisal route.
            for &(i, p) in ranked.iter().take(3) {
                let mut seq = st.words.clone();
                seq.push(words[i].clone());
                let via = (-b.surprisals(&seq).map_err(s)?.last().unwrap()).exp2();
                ensure((via - p).abs() <= 1e-9 * p.max(1e-300).max(1.0), || format!("p({}) {via} vs {p}", words[i]))?;
            }
            match measures::cloze_singular_share(st, &b, k, &lex.verb_forms) {
                Ok(r) => {
                    ensure(sg + pl > 0.0 && r.value == sg / (sg + pl), || {
                        format!("plant {plant} {}: share {} vs oracle {}", st.stim_id, r.value, sg / (sg + pl))
                    })?;
                    ensure(r.coverage == Some(sg + pl), || format!("coverage {:?} vs {}", r.coverage, sg + pl))?;
                }
                Err(e) => ensure(sg + pl == 0.0, || format!("plant {plant}: error {e} with verb mass {}", sg + pl))?,
            }
            compared += 1;
        }
    }
    Ok(format!("100 plants, {compared} prompt/plant pairs equal to brute force"))
}

// ---------------------------------------------------------------------------
// Planted-effect recovery

fn ttest(records: &[MeasurementRecord], contrast: &str, a: &str, b: &str, pair: &[&str], filter: &[(&str, &str)]) -> Result<stats::StatResult, String> {
    let spec = TTestSpec {
        name: format!("{contrast}:{b}-{a}"),
        contrast: contrast.into(),
        a: a.into(),
        b: b.into(),
        paired_by: pair.iter().map(|c| c.to_string()).collect(),
        filter: filter.iter().map(|(k, v)| (k.to_string(), vec![v.to_string()])).collect(),
    };
    stats::run_ttest(records, &spec, stats::DEFAULT_THRESHOLD).map_err(s)
}

fn mean_where(records: &[MeasurementRecord], filter: &[(&str, &str)]) -> f64 {
    let f: stats::Filter = filter.iter().map(|(k, v)| (k.to_string(), vec![v.to_string()])).collect();
    let rows = stats::apply_filter(records, &f);
    rows.iter().map(|r| r.value).sum::<f64>() / rows.len() as f64
}

fn planted(lex: &LexiconBundle, cfg: &PlantConfig, seed: u64) -> Result<LmBackend, String> {
    let spec = PlantSpec::from_config(cfg, lex, seed).map_err(s)?;
    make_planted_backend("planted", lex.vocabulary.clone(), &spec).map_err(s)
}

fn run_one(exp: experiments::Experiment, lex: &LexiconBundle, b: &LmBackend) -> Result<experiments::ExperimentOutput, String> {
    let models = [Model {
        id: "planted".into(),
        backend: b,
    }];
    experiments::run(exp, lex, &models, &RunOptions::default()).map_err(s)
}

/// Checks `b` > `a` in the named contrast: means ordered and the paired
/// t-test significant with a positive sign.
fn expect_gt(
    records: &[MeasurementRecord],
    contrast: &str,
    a: &str,
    b: &str,
    pair: &[&str],
    filter: &[(&str, &str)],
) -> Result<String, String> {
    let mut fa = filter.to_vec();
    fa.push((contrast, a));
    let mut fb = filter.to_vec();
    fb.push((contrast, b));
    let (ma, mb) = (mean_where(records, &fa), mean_where(records, &fb));
    ensure(mb > ma, || format!("{filter:?}: mean {b} {mb:.4} not above {a} {ma:.4}"))?;
    let t = ttest(records, contrast, a, b, pair, filter).map_err(|e| format!("{contrast} {filter:?}: {e}"))?;
    ensure(t.estimate > 0.0 && t.p_value < stats::DEFAULT_THRESHOLD, || {
        format!("{filter:?}: {b}-{a} = {:.4}, p = {:.3e}", t.estimate, t.p_value)
    })?;
    Ok(format!("{b}-{a} {:+.3} (p {:.0e})", t.estimate, t.p_value))
}

fn recovery_e1(lex: &LexiconBundle) -> Outcome {
    let cfg = PlantConfig {
        referential: Some(ReferentialPlant {
            p_preferred: 0.2,
            p_dispreferred: 0.1,
            hidden_weight: 0.0,
        }),
        jitter: 0.5,
        ..PlantConfig::default()
    };
    let out = run_one(experiments::Experiment::RefBehavior, lex, &planted(lex, &cfg, 1)?)?;
    // Lower surprisal when the pronoun matches the favoured antecedent.
    let a = expect_gt(&out.records, "pronoun_target", "subject", "object", &["frame"], &[("bias_category", "subject_biased")])?;
    let b = expect_gt(&out.records, "pronoun_target", "object", "subject", &["frame"], &[("bias_category", "object_biased")])?;
    Ok(format!("E1 subject-biased {a}; object-biased {b}"))
}

fn recovery_e2(lex: &LexiconBundle) -> Outcome {
    let cfg = PlantConfig {
        referential: Some(ReferentialPlant {
            p_preferred: 0.2,
            p_dispreferred: 0.1,
            hidden_weight: 0.5,
        }),
        noise: 0.3,
        ..PlantConfig::default()
    };
    let out = run_one(experiments::Experiment::RefRepresentation, lex, &planted(lex, &cfg, 2)?)?;
    let a = expect_gt(&out.records, "target", "object_noun", "subject_noun", &["stim_id", "layer"], &[("bias_category", "subject_biased")])?;
    let b = expect_gt(&out.records, "target", "subject_noun", "object_noun", &["stim_id", "layer"], &[("bias_category", "object_biased")])?;
    Ok(format!("E2 subject-biased {a}; object-biased {b}"))
}

fn recovery_e3(lex: &LexiconBundle) -> Outcome {
    let plant = |mode| PlantConfig {
        attachment: Some(AttachmentPlant {
            mode,
            p_major: 0.4,
            p_minor: 0.2,
            agreement_weight: 0.0,
            who_weight: 0.0,
        }),
        // Small enough that the 1-bit gap never flips an item preference.
        jitter: 0.1,
        ..PlantConfig::default()
    };
    let local = run_one(experiments::Experiment::SynBehavior, lex, &planted(lex, &plant(AttachmentMode::Local), 3)?)?;
    let a = expect_gt(&local.records, "agreement_location", "lower", "higher", &["frame"], &[("role", "rc_verb")])?;
    let c = expect_gt(&local.records, "lower_number", "pl", "sg", &[], &[("measure", "cloze_share")])?;
    ensure(local.preference_summary.iter().all(|p| p.pct_higher == 0.0), || {
        format!("local plant preference rates {:?}", local.preference_summary)
    })?;
    let ic = run_one(experiments::Experiment::SynBehavior, lex, &planted(lex, &plant(AttachmentMode::IcHigher), 3)?)?;
    let b = expect_gt(&ic.records, "agreement_location", "higher", "lower", &["frame"], &[("role", "rc_verb"), ("verb_type", "ic")])?;
    let rates: BTreeMap<&str, f64> = ic.preference_summary.iter().map(|p| (p.verb_type.as_str(), p.pct_higher)).collect();
    ensure(rates.get("ic") == Some(&100.0) && rates.get("nonic") == Some(&0.0), || format!("IC plant rates {rates:?}"))?;
    Ok(format!("E3 local {a}, cloze sg-lower {c}; IC-higher {b}, rates {rates:?}"))
}

fn recovery_e4(lex: &LexiconBundle) -> Outcome {
    let cfg = PlantConfig {
        attachment: Some(AttachmentPlant {
            mode: AttachmentMode::Local,
            p_major: 0.4,
            p_minor: 0.2,
            agreement_weight: 0.5,
            who_weight: 0.5,
        }),
        noise: 0.3,
        ..PlantConfig::default()
    };
    let out = run_one(experiments::Experiment::SynRepresentation, lex, &planted(lex, &cfg, 4)?)?;
    let who_ic = expect_gt(&out.records, "target", "lower_noun", "higher_noun", &["stim_id", "layer"], &[("anchor", "relativizer"), ("verb_type", "ic")])?;
    let who_nonic = expect_gt(&out.records, "target", "higher_noun", "lower_noun", &["stim_id", "layer"], &[("anchor", "relativizer"), ("verb_type", "nonic")])?;
    let verb = expect_gt(&out.records, "target", "lower_noun", "higher_noun", &["stim_id", "layer"], &[("anchor", "rc_verb"), ("agreement_location", "higher")])?;
    Ok(format!("E4 who/IC {who_ic}; who/nonIC {who_nonic}; verb {verb}"))
}

/// Small lexicon for the null Monte Carlo.
fn null_lexicon(lex: &LexiconBundle) -> LexiconBundle {
    let mut small = lex.clone();
    let keep: Vec<_> = [BiasCategory::SubjectBiased, BiasCategory::ObjectBiased]
        .into_iter()
        .flat_map(|c| lex.norms.iter().filter(move |n| n.bias_category() == c).take(8))
        .cloned()
        .collect();
    small.norms = filter_by_vocabulary(&keep, &lex.vocabulary).0;
    small.pairs.truncate(3);
    small.reading.truncate(4);
    small
}

fn null_calibration(lex: &LexiconBundle) -> Outcome {
    let small = null_lexicon(lex);
    let reps = 1000u64;
    let (mut rej_e1, mut rej_e3) = (0, 0);
    for seed in 0..reps {
        // Equal listed probabilities: only the jitter separates conditions.
        let cfg = PlantConfig {
            referential: Some(ReferentialPlant {
                p_preferred: 0.15,
                p_dispreferred: 0.15,
                hidden_weight: 0.0,
            }),
            attachment: Some(AttachmentPlant {
                mode: AttachmentMode::Neutral,
                p_major: 0.3,
                p_minor: 0.3,
                agreement_weight: 0.0,
                who_weight: 0.0,
            }),
            jitter: 0.5,
            ..PlantConfig::default()
        };
        let b = planted(&small, &cfg, 10_000 + seed)?;
        let e1 = run_one(experiments::Experiment::RefBehavior, &small, &b)?;
        let t = ttest(&e1.records, "pronoun_target", "subject", "object", &["frame"], &[("bias_category", "subject_biased")])?;
        rej_e1 += usize::from(t.p_value < stats::DEFAULT_THRESHOLD);
        let e3 = run_one(experiments::Experiment::SynBehavior, &small, &b)?;
        let t = ttest(&e3.records, "agreement_location", "lower", "higher", &["frame"], &[("role", "rc_verb")])?;
        rej_e3 += usize::from(t.p_value < stats::DEFAULT_THRESHOLD);
    }
    let (r1, r3) = (rej_e1 as f64 / reps as f64, rej_e3 as f64 / reps as f64);
    ensure(r1 <= 0.01 && r3 <= 0.01, || format!("false rejection E1 {r1:.3}, E3 {r3:.3}"))?;
    Ok(format!("null false rejections over {reps} seeds: E1 {rej_e1}, E3 {rej_e3} (alpha 0.005)"))
}

fn planted_recovery() -> Outcome {
    let lex = LexiconBundle::bundled();
    let parts = [recovery_e1(&lex)?, recovery_e2(&lex)?, recovery_e3(&lex)?, recovery_e4(&lex)?, null_calibration(&lex)?];
    Ok(parts.join(" | "))
}

// ---------------------------------------------------------------------------
// Statistics oracle

fn ln_gamma(x: f64) -> f64 {
    // Lanczos, g = 7, n = 9.
    const C: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        return (std::f64::consts::PI / (std::f64::consts::PI * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = C[0];
    let t = x + 7.5;
    for (i, c) in C.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

fn t_density(x: f64, df: f64) -> f64 {
    let c = ln_gamma((df + 1.0) / 2.0) - ln_gamma(df / 2.0) - 0.5 * (df * std::f64::consts::PI).ln();
    (c - (df + 1.0) / 2.0 * (1.0 + x * x / df).ln()).exp()
}

fn simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let h = (b - a) / n as f64;
    let mut acc = f(a) + f(b);
    for i in 1..n {
        acc += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    acc * h / 3.0
}

/// Two-sided p-value by integrating the density from 0 to |t|.
fn t_pvalue_oracle(t: f64, df: f64) -> f64 {
    let t = t.abs();
    let f = |x: f64| t_density(x, df);
    // Split the range so each panel is at most 0.05 wide.
    let panels = ((t / 0.05).ceil() as usize).max(1);
    let mut area = 0.0;
    for i in 0..panels {
        let a = t * i as f64 / panels as f64;
        let b = t * (i + 1) as f64 / panels as f64;
        area += simpson(&f, a, b, 16);
    }
    (1.0 - 2.0 * area).clamp(0.0, 1.0)
}

fn statistics_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let normal = rand_distr::Normal::new(0.0, 1.0).unwrap();
    use rand_distr::Distribution;

    // Two within-item factors (2 and 3 levels) with interaction and item
    // intercepts. Sum coding: the true coefficient of level j is its
    // deviation from the grand mean.
    let a_eff = [0.7, -0.7];
    let b_eff = [0.4, -0.1, -0.3];
    let ab_eff = [[0.25, -0.05, -0.2], [-0.25, 0.05, 0.2]];
    let truth: BTreeMap<&str, f64> = BTreeMap::from([
        ("a[a0]", a_eff[0]),
        ("b[b0]", b_eff[0]),
        ("b[b1]", b_eff[1]),
        ("a[a0]:b[b0]", ab_eff[0][0]),
        ("a[a0]:b[b1]", ab_eff[0][1]),
    ]);
    let spec = ModelSpec {
        name: "synthetic".into(),
        response: "value".into(),
        factors: vec![
            Factor {
                column: "a".into(),
                coding: Coding::Sum,
            },
            Factor {
                column: "b".into(),
                coding: Coding::Sum,
            },
        ],
        interaction_order: 2,
        item_effects: true,
        item_column: "item".into(),
        on_aliased: OnAliased::Error,
        filter: Default::default(),
    };
    let (mut covered, mut checked) = (0usize, 0usize);
    let mut per_term: BTreeMap<&str, usize> = BTreeMap::new();
    for _ in 0..1000 {
        let mut records = Vec::new();
        for item in 0..12 {
            let item_mean = 3.0 * normal.sample(&mut rng);
            for ai in 0..2 {
                for bi in 0..3 {
                    for rep in 0..2 {
                        let y = 5.0 + item_mean + a_eff[ai] + b_eff[bi] + ab_eff[ai][bi] + normal.sample(&mut rng);
                        records.push(MeasurementRecord {
                            stim_id: format!("{item}-{ai}-{bi}-{rep}"),
                            model: "synthetic".into(),
                            measure: measures::MeasureKind::Surprisal,
                            role: None,
                            anchor: None,
                            target: None,
                            layer: None,
                            value: y,
                            coverage: None,
                            conditions: BTreeMap::from([
                                ("a".to_string(), format!("a{ai}")),
                                ("b".to_string(), format!("b{bi}")),
                                ("item".to_string(), format!("{item:02}")),
                            ]),
                        });
                    }
                }
            }
        }
        let res = stats::fit_linear(&records, &spec, stats::DEFAULT_THRESHOLD).map_err(s)?;
        ensure(res.len() == truth.len(), || format!("terms {:?}", res.iter().map(|r| &r.term).collect::<Vec<_>>()))?;
        for r in &res {
            let beta = *truth.get(r.term.as_str()).ok_or_else(|| format!("unexpected term {}", r.term))?;
            checked += 1;
            if (r.estimate - beta).abs() <= 2.0 * r.std_error {
                covered += 1;
                *per_term.entry(truth.keys().find(|k| **k == r.term).unwrap()).or_default() += 1;
            }
            let oracle = t_pvalue_oracle(r.t_value, r.df);
            ensure((r.p_value - oracle).abs() <= 1e-6, || format!("{}: p {} vs oracle {oracle}", r.term, r.p_value))?;
        }
    }
    let coverage = covered as f64 / checked as f64;
    let min_term = per_term.values().min().copied().unwrap_or(0) as f64 / 1000.0;

    // Welch and paired t-tests on random data, including fractional df.
    let mut worst = 0.0f64;
    for i in 0..1000 {
        let na = rng.random_range(2..30);
        let nb = if i % 2 == 0 { na } else { rng.random_range(2..30) };
        let sa = rng.random_range(0.1..5.0);
        let shift = rng.random_range(-2.0..2.0);
        let a: Vec<f64> = (0..na).map(|_| sa * normal.sample(&mut rng)).collect();
        let b: Vec<f64> = (0..nb).map(|_| shift + normal.sample(&mut rng)).collect();
        let r = stats::posthoc_ttest(&a, &b, i % 2 == 0, stats::DEFAULT_THRESHOLD).map_err(s)?;
        let oracle = t_pvalue_oracle(r.t_value, r.df);
        worst = worst.max((r.p_value - oracle).abs());
        ensure((r.p_value - oracle).abs() <= 1e-6, || {
            format!("t {} df {}: p {} vs oracle {oracle}", r.t_value, r.df, r.p_value)
        })?;
    }
    ensure(coverage >= 0.95, || format!("2-SE coverage {coverage:.4} (lowest term {min_term:.3})"))?;
    Ok(format!(
        "2-SE coverage {coverage:.4} over {checked} coefficients (lowest term {min_term:.3}); t-test p worst deviation {worst:.1e}"
    ))
}

// ---------------------------------------------------------------------------
// Determinism

const E1_CONFIG: &str = r#"
seed = 42

[gen]
kind = "referential"
condition = "mismatch"
out = "out/stimuli.jsonl"

[run]
experiment = "e1"
out = "out/e1.tsv"

[[run.backend]]
name = "planted"
jitter = 0.3
[run.backend.referential]
p_preferred = 0.2
p_dispreferred = 0.1

[[run.backend]]
name = "bigram"

[stats]
input = "out/e1.tsv"
out = "out/e1.stats.tsv"

[[stats.model]]
name = "e1-planted"
factors = [{ column = "pronoun_target", coding = "sum" }, { column = "bias_category", coding = "sum" }]
interaction_order = 2
item_effects = true
on_aliased = "drop"
filter = { model = ["planted"] }

[[stats.ttest]]
name = "subject-biased"
contrast = "pronoun_target"
a = "subject"
b = "object"
paired_by = ["model", "frame"]
filter = { bias_category = ["subject_biased"] }

[[stats.summary]]
group_by = ["model", "bias_category", "pronoun_target"]
out = "out/e1.summary.tsv"

[[plot.figure]]
kind = "pronoun_surprisal"
input = "out/e1.tsv"
output = "out/fig_pronoun_surprisal.svg"

[plot]
manifest = "out/plot_e1.manifest.json"
"#;

const E3_CONFIG: &str = r#"
seed = 7

[run]
experiment = "e3"
out = "out/e3.jsonl"

[[run.backend]]
name = "tiny-rnn"
id = "rnn"
replicates = 2
epochs = 2
hidden_dim = 8
n_layers = 1

[[run.backend]]
name = "planted"
[run.backend.attachment]
mode = "ic_higher"
p_major = 0.4
p_minor = 0.2

[stats]
input = "out/e3.jsonl"
out = "out/e3.stats.tsv"

[[stats.ttest]]
name = "attachment"
contrast = "agreement_location"
a = "lower"
b = "higher"
paired_by = ["model", "frame"]
filter = { role = ["rc_verb"], model = ["planted"] }

[[plot.figure]]
kind = "rc_surprisal"
input = "out/e3.jsonl"
output = "out/fig_rc_surprisal.svg"

[plot]
manifest = "out/plot_e3.manifest.json"
"#;

const E4_CONFIG: &str = r#"
seed = 9

[run]
experiment = "e4"
out = "out/e4.tsv"

[[run.backend]]
name = "planted"
n_layers = 6
noise = 0.2
[run.backend.attachment]
mode = "local"
p_major = 0.4
p_minor = 0.2
agreement_weight = 0.4
who_weight = 0.4

[[plot.figure]]
kind = "rc_similarity_who"
input = "out/e4.tsv"
output = "out/fig_who.svg"
layer_stride = 3

[[plot.figure]]
kind = "rc_similarity_verb"
input = "out/e4.tsv"
output = "out/fig_verb.svg"

[plot]
manifest = "out/plot_e4.manifest.json"
"#;

fn run_cli(dir: &Path, args: &[&str]) -> Result<(), String> {
    let out = Command::new(bin())
        .args(args)
        .current_dir(dir)
        .env_remove("SOURCE_DATE_EPOCH")
        .output()
        .map_err(s)?;
    ensure(out.status.success(), || {
        format!("icprobe {args:?} failed: {}", String::from_utf8_lossy(&out.stderr))
    })
}

fn pipeline(dir: &Path) -> Result<(), String> {
    for (name, text) in [("e1.toml", E1_CONFIG), ("e3.toml", E3_CONFIG), ("e4.toml", E4_CONFIG)] {
        std::fs::write(dir.join(name), text).map_err(s)?;
    }
    run_cli(dir, &["gen", "--config", "e1.toml"])?;
    for cfg in ["e1.toml", "e3.toml", "e4.toml"] {
        run_cli(dir, &["run", "--config", cfg])?;
    }
    for cfg in ["e1.toml", "e3.toml"] {
        run_cli(dir, &["stats", "--config", cfg])?;
    }
    for cfg in ["e1.toml", "e3.toml", "e4.toml"] {
        run_cli(dir, &["plot", "--config", cfg])?;
    }
    Ok(())
}

fn without_timestamp(text: &str) -> Result<String, String> {
    let mut m = RunManifest::from_json(text).map_err(s)?;
    m.created_unix = 0;
    Ok(m.to_json())
}

fn determinism() -> Outcome {
    let a = tempfile::tempdir().map_err(s)?;
    let b = tempfile::tempdir().map_err(s)?;
    pipeline(a.path())?;
    pipeline(b.path())?;
    let mut names: Vec<String> = std::fs::read_dir(a.path().join("out"))
        .map_err(s)?
        .map(|e| e.map(|e| e.file_name().to_string_lossy().into_owned()))
        .collect::<Result<_, _>>()
        .map_err(s)?;
    names.sort();
    let mut other: Vec<String> = std::fs::read_dir(b.path().join("out"))
        .map_err(s)?
        .map(|e| e.map(|e| e.file_name().to_string_lossy().into_owned()))
        .collect::<Result<_, _>>()
        .map_err(s)?;
    other.sort();
    ensure(names == other, || format!("file sets differ: {names:?} vs {other:?}"))?;
    let mut manifests = 0;
    for n in &names {
        let x = std::fs::read(a.path().join("out").join(n)).map_err(s)?;
        let y = std::fs::read(b.path().join("out").join(n)).map_err(s)?;
        if n.ends_with("manifest.json") {
            manifests += 1;
            let (x, y) = (String::from_utf8(x).map_err(s)?, String::from_utf8(y).map_err(s)?);
            ensure(without_timestamp(&x)? == without_timestamp(&y)?, || format!("{n} differs"))?;
            let m = RunManifest::from_json(&x).map_err(s)?;
            ensure(m.verify_outputs(a.path()).is_empty(), || format!("{n}: recorded hashes do not match files"))?;
        } else {
            ensure(x == y, || format!("{n} differs between runs"))?;
        }
    }
    ensure(manifests >= 6, || format!("only {manifests} manifests written"))?;
    Ok(format!("{} files byte-identical across two runs ({manifests} manifests, timestamps excluded)", names.len()))
}

// ---------------------------------------------------------------------------
// External backend (informational)

fn dump_record(b: &LmBackend, words: &[String], with_next: bool) -> Result<String, String> {
    let mut rec = serde_json::json!({
        "words": words,
        "surprisal": b.surprisals(words).map_err(s)?,
        "hidden": b.hidden(words).map_err(s)?,
    });
    if with_next {
        rec["next"] = serde_json::json!(b.next_distribution(words).map_err(s)?.probs);
    }
    Ok(rec.to_string())
}

fn external_backend() -> Outcome {
    // A dump written from a planted model stands in for an exported
    // pretrained transformer.
    let lex = LexiconBundle::bundled();
    let small = null_lexicon(&lex);
    let cfg = PlantConfig {
        referential: Some(ReferentialPlant {
            p_preferred: 0.2,
            p_dispreferred: 0.1,
            hidden_weight: 0.3,
        }),
        attachment: Some(AttachmentPlant {
            mode: AttachmentMode::Local,
            p_major: 0.4,
            p_minor: 0.2,
            agreement_weight: 0.0,
            who_weight: 0.0,
        }),
        jitter: 0.3,
        ..PlantConfig::default()
    };
    let b = planted(&lex, &cfg, 5)?;
    let tok = WordTokenizer::new(lex.vocabulary.clone());
    let n = tok.vocab_size();
    let header = serde_json::json!({
        "format": "icprobe.dump",
        "version": 1,
        "name": "dumped-planted",
        "n_layers": b.descriptor().n_layers,
        "hidden_dim": b.descriptor().hidden_dim,
        "word_level": true,
        "tokens": (0..n).map(|i| tok.token(i)).collect::<Vec<_>>(),
        "words": (0..n).map(|i| tok.token_word(i)).collect::<Vec<_>>(),
    });
    let mut lines = vec![header.to_string()];
    let e1 = stimgen::gen_referential(&small.norms, &small.pairs, GenderCondition::Mismatch).map_err(s)?;
    for st in &e1.stimuli {
        for p in ["he", "she"] {
            let mut w = st.words.clone();
            w.push(p.into());
            lines.push(dump_record(&b, &w, false)?);
        }
    }
    for st in &stimgen::gen_completion(&small.completion).map_err(s)?.stimuli {
        lines.push(dump_record(&b, &st.words, true)?);
    }
    for st in &stimgen::gen_rc_reading(&small.reading).map_err(s)?.stimuli {
        lines.push(dump_record(&b, &st.words, false)?);
    }
    let dir = tempfile::tempdir().map_err(s)?;
    std::fs::write(dir.path().join("model.dump.jsonl"), lines.join("\n")).map_err(s)?;
    std::fs::write(dir.path().join("norms.tsv"), icprobe::lexicon::write_verb_norms(&small.norms)).map_err(s)?;
    std::fs::write(dir.path().join("pairs.tsv"), icprobe::lexicon::write_noun_pairs(&small.pairs)).map_err(s)?;
    std::fs::write(dir.path().join("reading.jsonl"), icprobe::lexicon::write_rc_items(&small.reading)).map_err(s)?;
    let base = r#"
[lexicons]
verb_norms = "norms.tsv"
noun_pairs = "pairs.tsv"
rc_reading = "reading.jsonl"

[[run.backend]]
name = "external"
dump = "model.dump.jsonl"
"#;
    let e1_cfg = format!("{base}\n[run]\nexperiment = \"e1\"\nout = \"e1.tsv\"\n\n[[plot.figure]]\nkind = \"pronoun_surprisal\"\ninput = \"e1.tsv\"\noutput = \"fig1.svg\"\n");
    let e3_cfg = format!("{base}\n[run]\nexperiment = \"e3\"\nout = \"e3.tsv\"\n");
    let parse = |t: &str| -> Result<Config, String> {
        // Sections may appear in any order in TOML; reorder through a table.
        let v: toml::Table = t.parse().map_err(s)?;
        Config::parse(&toml::to_string(&v).map_err(s)?).map_err(s)
    };
    commands::cmd_run(&parse(&e1_cfg)?, dir.path()).map_err(s)?;
    commands::cmd_plot(&parse(&e1_cfg)?, dir.path()).map_err(s)?;
    let fig = std::fs::read_to_string(dir.path().join("fig1.tsv")).map_err(s)?;
    commands::cmd_run(&parse(&e3_cfg)?, dir.path()).map_err(s)?;
    let rates = std::fs::read_to_string(dir.path().join("e3.preferences.summary.tsv")).map_err(s)?;
    ensure(fig.lines().count() == 5, || format!("figure table:\n{fig}"))?;
    let pct: Vec<&str> = rates.lines().skip(1).map(|l| l.rsplit('\t').next().unwrap_or("")).collect();
    Ok(format!(
        "dump backend: figure table {} cells, attachment-to-higher rates {:?} (non-gating)",
        fig.lines().count() - 1,
        pct
    ))
}

// ---------------------------------------------------------------------------

fn main() {
    let criteria: [(&str, bool, fn() -> Outcome); 9] = [
        ("stimulus counts", true, stimulus_counts),
        ("bias categorization", true, bias_categorization),
        ("surprisal identities", true, surprisal_identities),
        ("pearson properties", true, pearson_properties),
        ("cloze oracle", true, cloze_oracle),
        ("planted-effect recovery", true, planted_recovery),
        ("statistics oracle", true, statistics_oracle),
        ("determinism", true, determinism),
        ("external backend (informational)", false, external_backend),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, gating, f) in criteria {
        if !filter.is_empty() && !filter.iter().any(|p| name.contains(p.as_str())) {
            continue;
        }
        let start = Instant::now();
        let outcome = f();
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {name} ({secs:.1}s): {detail}"),
            Err(detail) => {
                println!("FAIL {name} ({secs:.1}s): {detail}");
                if gating {
                    failed += 1;
                }
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
