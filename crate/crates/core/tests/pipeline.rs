// SPDX-License-Identifier: MIT OR Apache-2.0

use std::sync::atomic::{AtomicUsize, Ordering};

use wasd_core::attribution::{cached_wt_ext, wt_ext, AttributionCache, AttributorKind};
use wasd_core::eval::{
    grid_search_lambda, planted_instance, run_experiment, toy_prompt_suite, Case, ExperimentParams,
    Method, PlantedSuiteParams,
};
use wasd_core::model::{
    ActivationModel, Interventions, ModelOutput, NeuronRef, Prompt, ToyTransformer,
    ToyTransformerConfig,
};
use wasd_core::predicate::Predicate;
use wasd_core::search::{explain, intervened_generate, ExplainParams, NeighborhoodMode, Rule};

/// Toy transformer that counts forward passes.
struct Counting {
    inner: ToyTransformer,
    calls: AtomicUsize,
}

impl ActivationModel for Counting {
    fn vocab_size(&self) -> usize {
        self.inner.vocab_size()
    }
    fn max_context(&self) -> usize {
        self.inner.max_context()
    }
    fn identity(&self) -> u64 {
        self.inner.identity()
    }
    fn enumerate_neurons(&self, len: usize) -> wasd_core::Result<Vec<NeuronRef>> {
        self.inner.enumerate_neurons(len)
    }
    fn forward(&self, p: &Prompt, iv: &Interventions) -> wasd_core::Result<ModelOutput> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.forward(p, iv)
    }
    fn logits(&self, p: &Prompt, iv: &Interventions) -> wasd_core::Result<Vec<f64>> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.logits(p, iv)
    }
}

fn toy() -> ToyTransformer {
    ToyTransformer::new(ToyTransformerConfig::with_seed(4)).unwrap()
}

#[test]
fn cache_hit_skips_every_forward() {
    let m = Counting {
        inner: toy(),
        calls: AtomicUsize::new(0),
    };
    let x = Prompt::from_ids([5, 9, 2, 40]).unwrap();
    let cache = AttributionCache::new();
    let first = cached_wt_ext(&m, &x, AttributorKind::Ablation, &cache).unwrap();
    let after_first = m.calls.load(Ordering::SeqCst);
    assert!(after_first > 1);
    let second = cached_wt_ext(&m, &x, AttributorKind::Ablation, &cache).unwrap();
    assert_eq!(m.calls.load(Ordering::SeqCst), after_first);
    assert_eq!(first, second);
    assert_eq!((cache.hits(), cache.misses()), (1, 1));
    assert_eq!(
        *first,
        wt_ext(&m.inner, &x, AttributorKind::Ablation).unwrap()
    );

    let off = AttributionCache::disabled();
    cached_wt_ext(&m, &x, AttributorKind::Ablation, &off).unwrap();
    cached_wt_ext(&m, &x, AttributorKind::Ablation, &off).unwrap();
    assert_eq!(m.calls.load(Ordering::SeqCst), 3 * after_first);
    assert!(off.is_empty());
}

#[test]
fn planted_exact_rejects_other_models() {
    let x = Prompt::from_ids([1, 2]).unwrap();
    assert!(wt_ext(&toy(), &x, AttributorKind::PlantedExact).is_err());
}

#[test]
fn generation_respects_rules() {
    let m = toy();
    let x = Prompt::from_ids([3, 7, 11]).unwrap();
    let none = Interventions::none();
    assert_eq!(
        intervened_generate(&m, &x, &Rule::new(), 1).unwrap(),
        vec![m.next_token(&x, &none).unwrap()]
    );

    // Empty rule is plain greedy decoding.
    let mut seq = x.clone();
    let mut plain = Vec::new();
    for _ in 0..5 {
        let t = m.next_token(&seq, &none).unwrap();
        plain.push(t);
        seq = seq.push(t);
    }
    assert_eq!(intervened_generate(&m, &x, &Rule::new(), 5).unwrap(), plain);

    let rule = Rule::from_predicates([Predicate {
        neuron: NeuronRef::new(1, 3, 0),
        value: 25.0,
    }])
    .unwrap();
    let (iv, _) = rule.interventions_for(x.len());
    assert_eq!(
        intervened_generate(&m, &x, &rule, 1).unwrap(),
        vec![m.next_token(&x, &iv).unwrap()]
    );
    assert!(intervened_generate(&m, &x, &rule, 0).is_err());
    // Context is 16 tokens; generating past it fails.
    assert!(intervened_generate(&m, &x, &rule, 20).is_err());
}

#[test]
fn planted_generation_always_emits_target() {
    let inst = planted_instance(&PlantedSuiteParams::default(), 4).unwrap();
    let model = inst.build().unwrap();
    let rule = Rule::from_predicates(
        model
            .ground_truth(0.0)
            .into_iter()
            .map(|(neuron, value)| Predicate { neuron, value }),
    )
    .unwrap();
    for ids in [
        vec![0u32],
        vec![15, 15, 15, 15, 15, 15, 15],
        vec![3, 1, 4, 1, 5, 9, 2, 6],
    ] {
        let x = Prompt::from_ids(ids).unwrap();
        let out = intervened_generate(&model, &x, &rule, 10).unwrap();
        assert!(out.iter().all(|&t| t == model.target_token()));
    }
}

#[test]
fn grid_search_tie_breaks() {
    let inst = planted_instance(&PlantedSuiteParams::default(), 1).unwrap();
    let model = inst.build().unwrap();
    let cases = [Case {
        model: &model,
        prompt: &inst.prompt,
    }];
    let params = ExplainParams {
        neighborhood: NeighborhoodMode::Enumerated { max_edits: 1 },
        attributor: AttributorKind::PlantedExact,
        ..Default::default()
    };
    let single = grid_search_lambda(&cases, &[4.0], &params).unwrap();
    assert_eq!(single.best_lambda, 4.0);
    assert_eq!(single.rows.len(), 1);

    // Every lambda large enough to clear the thresholds ties at precision
    // 1.0 with the same rule size; the smallest such lambda wins.
    let grid = [10.0, 8.0, 6.5, 4.0, 2.0];
    let r = grid_search_lambda(&cases, &grid, &params).unwrap();
    assert_eq!(r.rows.len(), grid.len());
    let winners: Vec<f64> = r
        .rows
        .iter()
        .filter(|row| row.mean_precision == 1.0)
        .map(|row| row.lambda)
        .collect();
    assert!(!winners.is_empty());
    assert_eq!(
        r.best_lambda,
        winners.iter().copied().fold(f64::INFINITY, f64::min)
    );
    assert!(grid_search_lambda(&cases, &[], &params).is_err());
    assert!(grid_search_lambda(&[], &grid, &params).is_err());
}

#[test]
fn experiment_report_is_reproducible() {
    let m = toy();
    let prompts = toy_prompt_suite(4, 4, 6, 64, 9).unwrap();
    let cases: Vec<Case> = prompts
        .iter()
        .map(|p| Case {
            model: &m,
            prompt: p,
        })
        .collect();
    let mut params = ExperimentParams {
        task: "toy".into(),
        eval_sample_count: 60,
        ..Default::default()
    };
    params.explain.perturb.sample_count = 30;
    let a = run_experiment(&cases, &params).unwrap();
    let b = run_experiment(&cases, &params).unwrap();
    assert_eq!(
        serde_json::to_string(&a).unwrap(),
        serde_json::to_string(&b).unwrap()
    );
    assert_eq!(a.rows.len(), 4);
    assert_eq!(a.summaries.len(), 4);
    for row in &a.rows {
        for cell in &row.cells {
            if let Method::TopK(k) = cell.method {
                assert_eq!(cell.size, k);
            }
        }
    }
    let table = a.to_table();
    let header: Vec<&str> = table.lines().next().unwrap().split_whitespace().collect();
    assert_eq!(
        header,
        ["Method", "Task", "Precision", "Instability", "Size"]
    );

    let one = ExperimentParams {
        methods: vec![Method::Wasd],
        ..params.clone()
    };
    assert_eq!(run_experiment(&cases, &one).unwrap().summaries.len(), 1);
    assert!(run_experiment(&[], &params).is_err());
}

#[test]
fn method_names_round_trip() {
    for m in Method::defaults() {
        let s = serde_json::to_string(&m).unwrap();
        assert_eq!(serde_json::from_str::<Method>(&s).unwrap(), m);
    }
    assert_eq!("top3".parse::<Method>().unwrap(), Method::TopK(3));
    assert!("top-0".parse::<Method>().is_err());
    assert!(serde_json::from_str::<Method>("\"beam\"").is_err());
}

#[test]
fn explain_on_toy_reaches_tau() {
    let m = toy();
    let x = Prompt::from_ids([12, 30, 7, 55, 1]).unwrap();
    let e = explain(&m, &x, &ExplainParams::default()).unwrap();
    assert_eq!(
        e.target_token,
        m.next_token(&x, &Interventions::none()).unwrap()
    );
    if e.result.reached_tau {
        assert!(e.result.precision.value >= 0.9);
    }
    assert!(e.result.rule.len() <= e.unpruned_size);
}
