// SPDX-License-Identifier: MIT OR Apache-2.0

//! Acceptance suite. Every criterion runs to completion and prints one
//! PASS/FAIL line; the test fails afterwards if any criterion failed.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use wasd_cli::commands::{experiment_report, explain_all, oracle_all};
use wasd_cli::config::{RunConfig, ToySuiteSpec};
use wasd_core::attribution::AttributorKind;
use wasd_core::eval::{
    jaccard_instability, topk_baseline_rule, toy_prompt_suite, BaselineConfig, Method, PlantedSuite,
};
use wasd_core::model::{
    ActivationModel, Interventions, ModelSpec, NeuronRef, PlantedModel, Prompt, ToyTransformer,
    ToyTransformerConfig,
};
use wasd_core::perturb::{NeighborhoodSample, PerturbParams};
use wasd_core::predicate::Predicate;
use wasd_core::rng::mix;
use wasd_core::search::{
    estimate_precision, wilson_interval, Explanation, NeighborhoodMode, OutputAcceptor, Rule, Z95,
};

const TAU: f64 = 0.9;

struct Verdict {
    pass: bool,
    detail: String,
}

fn manifest() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
}

fn suite_path() -> PathBuf {
    manifest().join("suites/planted50.json")
}

fn load_suite() -> PlantedSuite {
    PlantedSuite::from_json(&std::fs::read_to_string(suite_path()).unwrap()).unwrap()
}

fn planted_config() -> RunConfig {
    RunConfig::from_file(&manifest().join("configs/planted_explain.json")).unwrap()
}

/// Exact precision over the enumerated neighborhood, computed here rather
/// than trusted from the explanation.
fn exact_precision(
    model: &PlantedModel,
    x: &Prompt,
    rule: &Rule,
    max_edits: usize,
    protect: usize,
) -> f64 {
    let perturb = PerturbParams {
        protect_last_k: protect,
        ..Default::default()
    };
    let sample =
        NeighborhoodSample::exhaustive(x, max_edits, &perturb, model.vocab_size()).unwrap();
    let acc = OutputAcceptor::single(model.next_token(x, &Interventions::none()).unwrap());
    let est = estimate_precision(model, rule, &sample, &acc).unwrap();
    assert!(est.exact);
    est.value
}

fn criterion_1(explanations: &[Explanation], elapsed: Duration) -> Verdict {
    let suite = load_suite();
    let mut ok = 0;
    for (inst, e) in suite.instances.iter().zip(explanations) {
        let model = inst.build().unwrap();
        let p = exact_precision(
            &model,
            &inst.prompt,
            e.rule(),
            inst.max_edits,
            inst.protect_last_k,
        );
        if p >= TAU && e.result.precision.exact && (p - e.result.precision.value).abs() < 1e-12 {
            ok += 1;
        }
    }
    Verdict {
        pass: ok == suite.instances.len()
            && explanations.len() == 50
            && elapsed < Duration::from_secs(60),
        detail: format!(
            "{ok}/{} rules with exact precision >= {TAU}; explain took {:.2}s",
            explanations.len(),
            elapsed.as_secs_f64()
        ),
    }
}

fn criterion_2(explanations: &[Explanation]) -> Verdict {
    let oracle = oracle_all(&planted_config()).unwrap();
    let (mut equal, mut undercut, mut far) = (0, 0, 0);
    for (e, o) in explanations.iter().zip(&oracle.cases) {
        assert!(o.candidate_count <= 16);
        let Some(best) = &o.rule else {
            far += 1;
            continue;
        };
        let (w, b) = (e.rule().len(), best.len());
        if w == b {
            equal += 1;
        } else if w < b {
            undercut += 1;
        } else if w > b + 2 {
            far += 1;
        }
    }
    Verdict {
        pass: equal >= 45 && undercut == 0 && far == 0,
        detail: format!(
            "{equal}/50 sizes equal to the oracle, {undercut} below it, {far} more than 2 above"
        ),
    }
}

fn criterion_3(explanations: &[Explanation]) -> Verdict {
    let suite = load_suite();
    let (mut total, mut necessary) = (0, 0);
    for (inst, e) in suite.instances.iter().zip(explanations) {
        let model = inst.build().unwrap();
        for n in e.rule().neurons() {
            total += 1;
            let reduced = e.rule().without(&n);
            if exact_precision(
                &model,
                &inst.prompt,
                &reduced,
                inst.max_edits,
                inst.protect_last_k,
            ) < TAU
            {
                necessary += 1;
            }
        }
    }
    Verdict {
        pass: total > 0 && necessary == total,
        detail: format!("{necessary}/{total} predicates necessary"),
    }
}

fn toy_config(seed: u64) -> RunConfig {
    let mut cfg = RunConfig::from_file(&manifest().join("configs/toy_experiment.json")).unwrap();
    cfg.model = Some(ModelSpec::Toy(ToyTransformerConfig::with_seed(seed)));
    cfg.toy_suite = Some(ToySuiteSpec {
        count: 100,
        min_len: 4,
        max_len: 7,
        seed,
    });
    cfg.explain.perturb.seed = seed;
    cfg.experiment.eval_seed = 1000 + seed;
    cfg
}

fn criterion_4() -> Verdict {
    let mut held = 0;
    let mut notes = Vec::new();
    for seed in 0..4u64 {
        let cfg = toy_config(seed);
        assert_eq!(cfg.experiment.eval_sample_count, 500);
        let report = experiment_report(&cfg).unwrap();
        let mean = |m: Method| report.summary(m).unwrap().precision.mean;
        let inst = |m: Method| report.summary(m).unwrap().instability.unwrap().mean;
        let wasd = mean(Method::Wasd);
        let prec_ok = [3, 5, 10].iter().all(|&k| wasd > mean(Method::TopK(k)));
        let inst_ok = inst(Method::Wasd) <= inst(Method::TopK(10));
        if prec_ok && inst_ok {
            held += 1;
        }
        notes.push(format!(
            "seed {seed}: prec {:.3} vs {:.3}/{:.3}/{:.3}, inst {:.3} vs {:.3} [{}]",
            wasd,
            mean(Method::TopK(3)),
            mean(Method::TopK(5)),
            mean(Method::TopK(10)),
            inst(Method::Wasd),
            inst(Method::TopK(10)),
            if prec_ok && inst_ok { "holds" } else { "fails" }
        ));
    }
    Verdict {
        pass: held >= 3,
        detail: format!("{held}/4 seeds; {}", notes.join("; ")),
    }
}

fn criterion_5() -> Verdict {
    let model = ToyTransformer::new(ToyTransformerConfig::with_seed(5)).unwrap();
    let prompts = toy_prompt_suite(30, 4, 5, model.vocab_size(), 5).unwrap();
    let coefficients = [1.0, 2.0, 4.0];
    let (mut close, mut covered) = (0, 0);
    let mut worst: f64 = 0.0;
    for (i, x) in prompts.iter().enumerate() {
        let cfg = BaselineConfig {
            k: 1 + i % 5,
            coefficient: coefficients[i % 3],
        };
        let rule = topk_baseline_rule(&model, x, AttributorKind::Ablation, cfg).unwrap();
        let acc = OutputAcceptor::single(model.next_token(x, &Interventions::none()).unwrap());
        let full =
            NeighborhoodSample::exhaustive(x, 1, &PerturbParams::default(), model.vocab_size())
                .unwrap();
        let exact = estimate_precision(&model, &rule, &full, &acc)
            .unwrap()
            .value;
        let mc_sample = full.subsample(1000, mix(0xCA11B, i as u64)).unwrap();
        let mc = estimate_precision(&model, &rule, &mc_sample, &acc).unwrap();
        let (lo, hi) = wilson_interval(mc.hits, mc.trials, Z95);
        worst = worst.max((mc.value - exact).abs());
        close += usize::from((mc.value - exact).abs() <= 0.05);
        covered += usize::from(lo <= exact && exact <= hi);
    }
    Verdict {
        pass: close >= 28 && covered >= 28,
        detail: format!("|MC - exact| <= 0.05 in {close}/30, Wilson CI covers exact in {covered}/30, worst gap {worst:.4}"),
    }
}

fn criterion_6() -> Verdict {
    let n = |c: u32| NeuronRef::new(0, c, 0);
    let set = |cs: &[u32]| cs.iter().map(|&c| n(c)).collect::<BTreeSet<_>>();
    let identity = jaccard_instability(&set(&[1, 2]), &set(&[1, 2])).value == 0.0;
    let disjoint = jaccard_instability(&set(&[1, 2]), &set(&[3, 4])).value == 1.0;
    let overlap = jaccard_instability(&set(&[1, 2]), &set(&[2, 3])).value == 2.0 / 3.0;
    let model = ToyTransformer::new(ToyTransformerConfig::default()).unwrap();
    let mut sizes_ok = true;
    for x in toy_prompt_suite(10, 1, 7, model.vocab_size(), 6).unwrap() {
        for k in [3, 5, 10] {
            let rule = topk_baseline_rule(
                &model,
                &x,
                AttributorKind::Ablation,
                BaselineConfig {
                    k,
                    coefficient: 6.5,
                },
            )
            .unwrap();
            sizes_ok &= rule.len() == k;
        }
    }
    Verdict {
        pass: identity && disjoint && overlap && sizes_ok,
        detail: format!("identity {identity}, disjoint {disjoint}, overlap 2/3 {overlap}, baseline sizes {sizes_ok}"),
    }
}

fn run_cli(args: &[&str]) -> i32 {
    wasd_cli::run(std::iter::once("wasd").chain(args.iter().copied()))
}

fn read(dir: &Path, name: &str) -> Vec<u8> {
    std::fs::read(dir.join(name)).unwrap_or_default()
}

fn criterion_7() -> Verdict {
    let tmp = tempfile::tempdir().unwrap();
    let suite = suite_path();
    let suite = suite.to_str().unwrap();
    let toy_model = tmp.path().join("toy.json");
    std::fs::write(&toy_model, r#"{"kind":"toy","seed":2}"#).unwrap();
    let toy_model = toy_model.to_str().unwrap();
    let prompts = tmp.path().join("prompts.json");
    std::fs::write(&prompts, "[[1,2,3,4,5],[9,8,7,6],[10,20,30,40,50,60]]").unwrap();
    let prompts = prompts.to_str().unwrap();
    let rule = tmp.path().join("rule.json");
    std::fs::write(
        &rule,
        r#"{"predicates":[{"layer":1,"channel":4,"pos_from_end":0,"value":7.5}]}"#,
    )
    .unwrap();
    let rule = rule.to_str().unwrap();

    let commands: Vec<(&str, Vec<&str>)> = vec![
        (
            "explain.json",
            vec![
                "explain",
                "--suite",
                suite,
                "--enumerate",
                "1",
                "--attributor",
                "planted-exact",
            ],
        ),
        (
            "explain.json",
            vec![
                "explain",
                "--model",
                toy_model,
                "--suite",
                prompts,
                "--samples",
                "40",
                "--allow-partial",
            ],
        ),
        (
            "oracle.json",
            vec![
                "oracle",
                "--suite",
                suite,
                "--enumerate",
                "1",
                "--attributor",
                "planted-exact",
            ],
        ),
        (
            "experiment.json",
            vec![
                "experiment",
                "--model",
                toy_model,
                "--suite",
                prompts,
                "--samples",
                "30",
                "--eval-samples",
                "60",
            ],
        ),
        (
            "grid-search.json",
            vec![
                "grid-search",
                "--model",
                toy_model,
                "--suite",
                prompts,
                "--samples",
                "30",
            ],
        ),
        (
            "intervene.json",
            vec![
                "intervene",
                "--model",
                toy_model,
                "--prompt",
                "3,1,4,1,5",
                "--rule",
                rule,
                "--steps",
                "4",
            ],
        ),
    ];
    let mut identical = 0;
    let mut failures = Vec::new();
    for (i, (artifact, args)) in commands.iter().enumerate() {
        let mut outputs = Vec::new();
        for (run, threads) in [(0, "1"), (1, "8"), (2, "1")] {
            let out = tmp.path().join(format!("c{i}-r{run}"));
            let mut full = vec!["--threads", threads];
            full.extend(args.iter().copied());
            full.extend(["--out", out.to_str().unwrap()]);
            let code = run_cli(&full);
            outputs.push((code, read(&out, artifact)));
        }
        let same = outputs
            .iter()
            .all(|o| o.0 == 0 && !o.1.is_empty() && o.1 == outputs[0].1);
        if same {
            identical += 1;
        } else {
            failures.push(args[0]);
        }
    }
    Verdict {
        pass: identical == commands.len(),
        detail: format!(
            "{identical}/{} commands byte-identical across reruns and 1 vs 8 threads{}",
            commands.len(),
            if failures.is_empty() {
                String::new()
            } else {
                format!("; differing: {failures:?}")
            }
        ),
    }
}

fn criterion_8() -> Verdict {
    let tmp = tempfile::tempdir().unwrap();
    let suite = load_suite();
    let (mut runs, mut ok, mut adversarial) = (0, 0, 0);
    for inst in suite.instances.iter().step_by(5) {
        let model = inst.build().unwrap();
        let rule = Rule::from_predicates(
            model
                .ground_truth(0.0)
                .into_iter()
                .map(|(neuron, value)| Predicate { neuron, value }),
        )
        .unwrap();
        let rule_path = tmp.path().join(format!("truth-{}.json", inst.id));
        std::fs::write(&rule_path, serde_json::to_string(&rule).unwrap()).unwrap();
        let model_path = tmp.path().join(format!("model-{}.json", inst.id));
        std::fs::write(
            &model_path,
            serde_json::to_string(&ModelSpec::Planted(inst.model.clone())).unwrap(),
        )
        .unwrap();

        let mut inputs: Vec<Prompt> = vec![inst.prompt.clone(), Prompt::from_ids([0]).unwrap()];
        inputs.extend(toy_prompt_suite(4, 1, 12, 16, inst.id as u64).unwrap());
        for x in &inputs {
            if model.next_token(x, &Interventions::none()).unwrap() != model.target_token() {
                adversarial += 1;
            }
            let ids: Vec<String> = x.tokens().iter().map(|t| t.to_string()).collect();
            let ids = ids.join(",");
            for steps in [1usize, 5, 10] {
                runs += 1;
                let out = tmp.path().join("out");
                let code = run_cli(&[
                    "intervene",
                    "--model",
                    model_path.to_str().unwrap(),
                    "--prompt",
                    &ids,
                    "--rule",
                    rule_path.to_str().unwrap(),
                    "--steps",
                    &steps.to_string(),
                    "--out",
                    out.to_str().unwrap(),
                ]);
                let artifact: serde_json::Value =
                    serde_json::from_slice(&read(&out, "intervene.json")).unwrap_or_default();
                let tokens = artifact["result"]["tokens"]
                    .as_array()
                    .cloned()
                    .unwrap_or_default();
                let target = u64::from(model.target_token().0);
                if code == 0
                    && tokens.len() == steps
                    && tokens.iter().all(|t| t.as_u64() == Some(target))
                {
                    ok += 1;
                }
            }
        }
    }
    Verdict {
        pass: ok == runs && adversarial > 0,
        detail: format!("{ok}/{runs} generations all target ({adversarial} inputs whose plain output is not the target)"),
    }
}

#[test]
fn acceptance() {
    let start = Instant::now();
    let explained = explain_all(&planted_config()).unwrap().explanations;
    let elapsed = start.elapsed();
    assert!(planted_config().explain.neighborhood == NeighborhoodMode::Enumerated { max_edits: 1 });
    assert_eq!(
        planted_config().explain.attributor,
        AttributorKind::PlantedExact
    );

    let verdicts = [
        ("planted recovery", criterion_1(&explained, elapsed)),
        ("oracle comparison", criterion_2(&explained)),
        ("irredundancy", criterion_3(&explained)),
        ("directional baseline comparison", criterion_4()),
        ("Monte Carlo calibration", criterion_5()),
        ("metric identities", criterion_6()),
        ("determinism", criterion_7()),
        ("intervened generation", criterion_8()),
    ];
    for (i, (name, v)) in verdicts.iter().enumerate() {
        println!(
            "criterion {} ({name}): {} | {}",
            i + 1,
            if v.pass { "PASS" } else { "FAIL" },
            v.detail
        );
    }
    let failed: Vec<usize> = verdicts
        .iter()
        .enumerate()
        .filter(|(_, (_, v))| !v.pass)
        .map(|(i, _)| i + 1)
        .collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
