//! Acceptance checks. Each criterion prints one PASS/FAIL line; the process
//! exits non-zero if any fails.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use pomr::baseline::{BaselineScorer, ChapterRange, OntologyMaps};
use pomr::code::{Code, CodeSystem, RelationKind};
use pomr::embedding::{
    cosine, knn_transfer, train_skipgram, EmbeddingTable, SkipGramConfig, SourceTag, DEFAULT_KNN_K,
};
use pomr::encounters::{
    CoocDefinition, CooccurrenceCounts, FeatureSet, DEFAULT_SPECIALTY_VOCAB_SIZE,
};
use pomr::eval::{cohen_kappa, evaluate, EvalOptions, TiePolicy, TripletScorer};
use pomr::kb::{
    split_by_problem, split_random, KnowledgeBase, Label, Problem, Split, Triplet,
    DEFAULT_FRACTIONS,
};
use pomr::model::{
    batch_loss, gradients, initialize, model_targets, train, Ablation, Example, InitConfig,
    ModelParams, ModelScorer, PairInputs, ParamGroup, TrainConfig, TrainingPair,
};
use pomr::synth::{generate, target_code, PlantSpec, SynthData};

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn within(elapsed: Duration, limit: Duration) -> Result<(), String> {
    check(
        elapsed < limit,
        format!("took {elapsed:.2?}, limit {limit:?}"),
    )
}

fn code(s: &str) -> Code {
    s.parse().unwrap()
}

// ---------------------------------------------------------------- scoring

fn scoring_exactness() -> Outcome {
    let start = Instant::now();
    let t = code("RXNORM:1");
    let mut p = ModelParams::new(
        2,
        0,
        6,
        vec!["P".into()],
        vec![(RelationKind::Medication, t.clone())],
    );
    p.problem_vec_mut(0).copy_from_slice(&[1.0, 2.0]);
    p.target_vec_mut(0).copy_from_slice(&[3.0, 4.0]);
    let s = p
        .score_emb("P", RelationKind::Medication, &t)
        .map_err(|e| e.to_string())?;
    check(s == 11.0, format!("worked example scored {s}"))?;

    let dim = 16;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut p = ModelParams::new(
        dim,
        0,
        6,
        vec!["P".into()],
        vec![(RelationKind::Lab, t.clone())],
    );
    let mut max_err = 0.0f64;
    for _ in 0..100 {
        let a: Vec<f64> = (0..dim).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let b: Vec<f64> = (0..dim).map(|_| rng.gen_range(-3.0..3.0)).collect();
        p.problem_vec_mut(0).copy_from_slice(&a);
        p.target_vec_mut(0).copy_from_slice(&b);
        let mut dot = 0.0;
        for i in 0..dim {
            dot += a[i] * b[i];
        }
        let s = p
            .score_emb("P", RelationKind::Lab, &t)
            .map_err(|e| e.to_string())?;
        max_err = max_err.max((s - dot).abs());
    }
    check(
        max_err == 0.0,
        format!("all-ones relation differs from dot product by {max_err:e}"),
    )?;
    within(start.elapsed(), Duration::from_secs(1))?;
    Ok(format!(
        "score = 11, max |score - dot| = 0 over 100 pairs ({:.1?})",
        start.elapsed()
    ))
}

// ---------------------------------------------------------------- gradients

fn random_params(rng: &mut ChaCha8Rng) -> ModelParams {
    let kinds = [
        RelationKind::Medication,
        RelationKind::Procedure,
        RelationKind::Lab,
    ];
    let targets = (0..6)
        .map(|i| (kinds[i % 3], code(&format!("INTERNAL:T{i}"))))
        .collect();
    let mut p = ModelParams::new(8, 4, 6, (0..3).map(|i| format!("P{i}")).collect(), targets);
    for g in ParamGroup::ALL {
        for v in p.values_mut(g) {
            *v = rng.gen_range(-1.0..1.0);
        }
    }
    p
}

fn random_batch(rng: &mut ChaCha8Rng, params: &ModelParams, features: bool) -> Vec<TrainingPair> {
    let mut ex = |p: usize, t: usize| {
        let inputs = features.then(|| {
            Arc::new(PairInputs {
                spec_problem: (0..4).map(|_| rng.gen_range(0.0..0.7)).collect(),
                spec_target: (0..4).map(|_| rng.gen_range(0.0..0.7)).collect(),
                features: (0..6).map(|_| rng.gen_range(0.0..3.0)).collect(),
            })
        });
        Example::new(params, p, params.targets()[t].0, t, inputs).unwrap()
    };
    (0..6)
        .map(|i| TrainingPair {
            positive: ex(i % 3, i),
            negative: ex((i + 1) % 3, (i + 3) % 6),
        })
        .collect()
}

fn gradient_oracle() -> Outcome {
    let start = Instant::now();
    let h = 1e-4;
    // margin large enough that every pair stays on the linear side of the hinge
    let margin = 100.0;
    let mut worst = 0.0f64;
    let mut cases = 0;
    for (seed, ablation) in Ablation::ALL.into_iter().enumerate() {
        for features in [true, false] {
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed as u64);
            let mut params = random_params(&mut rng);
            params.freeze = ablation.freeze_flags();
            let batch = random_batch(&mut rng, &params, features);
            let (_, grads) = gradients(&params, &batch, margin);
            for g in ParamGroup::ALL {
                let analytic = grads.get(g);
                if params.freeze.is_frozen(g) {
                    check(
                        analytic.iter().all(|&x| x == 0.0),
                        format!("{ablation:?}: frozen {g:?} has gradient"),
                    )?;
                    continue;
                }
                let mut numeric = vec![0.0; analytic.len()];
                for i in 0..analytic.len() {
                    let mut plus = params.clone();
                    plus.values_mut(g)[i] += h;
                    let mut minus = params.clone();
                    minus.values_mut(g)[i] -= h;
                    numeric[i] = (batch_loss(&plus, &batch, margin)
                        - batch_loss(&minus, &batch, margin))
                        / (2.0 * h);
                }
                let scale = analytic
                    .iter()
                    .chain(&numeric)
                    .fold(0.0f64, |m, x| m.max(x.abs()));
                let diff = analytic
                    .iter()
                    .zip(&numeric)
                    .fold(0.0f64, |m, (a, n)| m.max((a - n).abs()));
                let rel = if scale == 0.0 { 0.0 } else { diff / scale };
                worst = worst.max(rel);
                check(
                    rel < 1e-5,
                    format!("{ablation:?} features={features} {g:?}: relative error {rel:e}"),
                )?;
            }
            cases += 1;
        }
    }
    within(start.elapsed(), Duration::from_secs(10))?;
    Ok(format!(
        "{cases} regimes, worst relative error {worst:.1e}, frozen groups zero ({:.1?})",
        start.elapsed()
    ))
}

// ---------------------------------------------------------------- tie rank

fn single_problem_kb(targets: &[(Code, Label)]) -> KnowledgeBase {
    let problem = Problem {
        id: "P".into(),
        name: "P".into(),
        definition: [code("ICD10:I10")].into_iter().collect(),
    };
    let ts = targets
        .iter()
        .map(|(t, l)| Triplet {
            problem: "P".into(),
            relation: RelationKind::Medication,
            target: t.clone(),
            label: *l,
            round: 1,
        })
        .collect();
    KnowledgeBase::new(vec![problem], ts).unwrap()
}

fn median_tie_rank() -> Outcome {
    // drugs 0..=4 map to the problem's code, 5 and up do not
    let mut maps = OntologyMaps::default();
    for i in 0..5 {
        maps.med_to_diagnoses.insert(
            code(&format!("RXNORM:{i}")),
            [code("ICD10:I10")].into_iter().collect(),
        );
    }
    maps.chapters.push(ChapterRange {
        system: CodeSystem::Icd10,
        lo: "I00".into(),
        hi: "I99".into(),
        discipline: "circulatory".into(),
    });
    // one positive and nine negatives, four of the negatives relevant
    let cases = [(0, 1..10), (10, 1..10)];
    let mut ranks = Vec::new();
    for (positive, negatives) in cases {
        let mut triplets: Vec<(Code, Label)> = negatives
            .map(|i| (code(&format!("RXNORM:{i}")), Label::Negative))
            .collect();
        triplets.push((code(&format!("RXNORM:{positive}")), Label::Positive));
        let kb = single_problem_kb(&triplets);
        let all: Vec<usize> = (0..10).collect();
        let scorer = BaselineScorer {
            maps: &maps,
            kb: &kb,
        };
        let report = evaluate(
            &scorer,
            &kb,
            &all,
            &EvalOptions::with_policy(TiePolicy::Median),
        )
        .map_err(|e| e.to_string())?;
        ranks.push(report.ranks[0].rank);
    }
    check(ranks == [3.0, 7.5], format!("ranks {ranks:?}"))?;
    Ok("relevant positive rank 3.0, irrelevant positive rank 7.5".into())
}

// ---------------------------------------------------------------- metrics

struct Fixed(BTreeMap<(String, Code), f64>);

impl TripletScorer for Fixed {
    fn score(&self, problem: &str, _: RelationKind, target: &Code) -> pomr::Result<Option<f64>> {
        Ok(self.0.get(&(problem.to_string(), target.clone())).copied())
    }
}

/// Rank by listing every candidate and reading off the positive's position.
fn enumerate_rank(pos: f64, negs: &[f64], policy: TiePolicy) -> f64 {
    let mut items: Vec<(f64, bool)> = negs.iter().map(|&s| (s, false)).collect();
    items.push((pos, true));
    // descending by score; among equal scores negatives first (pessimistic)
    items.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let at = items.iter().position(|x| x.1).unwrap() + 1;
    match policy {
        TiePolicy::Strict => at as f64,
        TiePolicy::Median => {
            let tied: Vec<usize> = (0..items.len())
                .filter(|&i| items[i].0 == pos)
                .map(|i| i + 1)
                .collect();
            (tied[0] + tied[tied.len() - 1]) as f64 / 2.0
        }
    }
}

fn metric_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let problems: Vec<Problem> = (0..2)
        .map(|p| Problem {
            id: format!("P{p}"),
            name: format!("P{p}"),
            definition: [code(&format!("ICD10:A0{p}"))].into_iter().collect(),
        })
        .collect();
    let kinds = [RelationKind::Medication, RelationKind::Lab];
    let mut triplets = Vec::new();
    let mut scores = BTreeMap::new();
    let mut n_pos = 0;
    for p in 0..2 {
        for (k, kind) in kinds.iter().enumerate() {
            let positives = if p == 0 && k == 0 { 4 } else { 2 };
            for i in 0..positives + 5 {
                let target = match kind {
                    RelationKind::Lab => code(&format!("LOINC:{p}{i}")),
                    _ => code(&format!("RXNORM:{p}{i}")),
                };
                let label = if i < positives {
                    Label::Positive
                } else {
                    Label::Negative
                };
                n_pos += (i < positives) as usize;
                // coarse scores force ties
                scores.insert(
                    (format!("P{p}"), target.clone()),
                    rng.gen_range(0..4) as f64 * 0.5,
                );
                triplets.push(Triplet {
                    problem: format!("P{p}"),
                    relation: *kind,
                    target,
                    label,
                    round: 1,
                });
            }
        }
    }
    check(n_pos == 10, format!("toy KB has {n_pos} positives"))?;
    let kb = KnowledgeBase::new(problems, triplets).unwrap();
    let all: Vec<usize> = (0..kb.triplets().len()).collect();
    let scorer = Fixed(scores.clone());
    for policy in [TiePolicy::Strict, TiePolicy::Median] {
        let report = evaluate(&scorer, &kb, &all, &EvalOptions::with_policy(policy))
            .map_err(|e| e.to_string())?;
        let mut oracle = Vec::new();
        for pos in kb.triplets().iter().filter(|t| t.label.is_positive()) {
            let negs: Vec<f64> = kb
                .triplets()
                .iter()
                .filter(|t| {
                    !t.label.is_positive() && t.problem == pos.problem && t.relation == pos.relation
                })
                .map(|t| scores[&(t.problem.clone(), t.target.clone())])
                .collect();
            oracle.push(enumerate_rank(
                scores[&(pos.problem.clone(), pos.target.clone())],
                &negs,
                policy,
            ));
        }
        let n = oracle.len() as f64;
        let mr = oracle.iter().sum::<f64>() / n;
        let mrr = oracle.iter().map(|r| 1.0 / r).sum::<f64>() / n;
        let h1 = oracle.iter().filter(|&&r| r <= 1.0).count() as f64 / n;
        let h5 = oracle.iter().filter(|&&r| r <= 5.0).count() as f64 / n;
        let m = report.overall.ok_or("no metrics")?;
        for (name, got, want) in [
            ("MR", m.mr, mr),
            ("MRR", m.mrr, mrr),
            ("H@1", m.hits1, h1),
            ("H@5", m.hits5, h5),
        ] {
            check(
                (got - want).abs() <= 1e-12,
                format!("{policy:?} {name}: {got} vs oracle {want}"),
            )?;
        }
    }
    Ok("MR, MRR, H@1, H@5 match enumeration under both tie policies".into())
}

// ---------------------------------------------------------------- planted learning

struct Prepared {
    data: SynthData,
    features: FeatureSet,
    init: ModelParams,
}

fn prepare(spec: &PlantSpec) -> Prepared {
    let data = generate(spec).unwrap();
    let problems: Vec<&Problem> = data.kb.problems().collect();
    let features = FeatureSet::build(&data.store, &problems, DEFAULT_SPECIALTY_VOCAB_SIZE);
    let vocab = data.store.build_vocabulary(1);
    let (init, _) = initialize(
        &data.kb,
        &model_targets(&data.kb, &vocab),
        None,
        None,
        &BTreeMap::new(),
        features.specialty_dim(),
        &InitConfig {
            seed: spec.seed,
            ..InitConfig::default()
        },
    )
    .unwrap();
    Prepared {
        data,
        features,
        init,
    }
}

fn test_mrr(p: &Prepared, split: &Split, ablation: Ablation, use_features: bool, seed: u64) -> f64 {
    let cfg = TrainConfig {
        ablation,
        use_features,
        seed,
        ..TrainConfig::default()
    };
    let features = use_features.then_some(&p.features);
    let (params, _) = train(&p.data.kb, split, p.init.clone(), features, &cfg).unwrap();
    let scorer = ModelScorer {
        params: &params,
        features,
    };
    let report = evaluate(
        &scorer,
        &p.data.kb,
        &split.test,
        &EvalOptions::with_policy(TiePolicy::Strict),
    )
    .unwrap();
    report.overall.map_or(0.0, |m| m.mrr)
}

fn planted_learning() -> Outcome {
    let start = Instant::now();
    let mut wins = 0;
    let mut rows = Vec::new();
    for seed in 1..=5 {
        let p = prepare(&PlantSpec {
            seed,
            ..PlantSpec::default()
        });
        let split = split_random(&p.data.kb, DEFAULT_FRACTIONS, seed).unwrap();
        let full = test_mrr(&p, &split, Ablation::Full, true, seed);
        let frozen = test_mrr(&p, &split, Ablation::Frozen, true, seed);
        if full >= 0.9 && full - frozen >= 0.2 {
            wins += 1;
        }
        rows.push(format!("{full:.3}/{frozen:.3}"));
    }
    let detail = format!("full/frozen MRR per seed [{}]", rows.join(", "));
    check(wins >= 4, format!("{wins}/5 seeds pass; {detail}"))?;
    within(start.elapsed(), Duration::from_secs(120))?;
    Ok(format!(
        "{wins}/5 seeds; {detail} ({:.1?})",
        start.elapsed()
    ))
}

fn held_out_problems() -> Outcome {
    let start = Instant::now();
    let mut wins = 0;
    let mut rows = Vec::new();
    for seed in 1..=5 {
        let p = prepare(&PlantSpec {
            seed,
            ..PlantSpec::default()
        });
        let split = split_by_problem(&p.data.kb, 3, 5, seed).unwrap();
        let with = test_mrr(&p, &split, Ablation::Full, true, seed);
        let without = test_mrr(&p, &split, Ablation::Full, false, seed);
        if with > without {
            wins += 1;
        }
        rows.push(format!("{with:.3}/{without:.3}"));
    }
    let detail = format!("+features/no-features MRR per seed [{}]", rows.join(", "));
    check(wins >= 4, format!("{wins}/5 seeds pass; {detail}"))?;
    Ok(format!(
        "{wins}/5 seeds; {detail} ({:.1?})",
        start.elapsed()
    ))
}

// ---------------------------------------------------------------- k-NN transfer

fn knn() -> Outcome {
    let mut internal = EmbeddingTable::new(3, SourceTag::SiteSpecific);
    let mut external = EmbeddingTable::new(4, SourceTag::External);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let tokens: Vec<String> = (0..8).map(|i| format!("INTERNAL:C{i}")).collect();
    for t in &tokens {
        internal
            .insert(
                t.clone(),
                (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            )
            .unwrap();
    }
    // C0 is the code lacking an external vector; C7 has none either
    for t in &tokens[1..7] {
        external
            .insert(
                t.clone(),
                (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            )
            .unwrap();
    }
    let query = internal.get(&tokens[0]).unwrap();
    let mut order: Vec<(f64, &String)> = tokens[1..7]
        .iter()
        .map(|t| (cosine(query, internal.get(t).unwrap()), t))
        .collect();
    order.sort_by(|a, b| b.0.total_cmp(&a.0));

    let k1 = knn_transfer(&tokens[0], &internal, &external, 1, &mut rng);
    check(
        !k1.random && k1.vector == external.get(order[0].1).unwrap(),
        "k=1 is not the nearest neighbour's vector",
    )?;
    let k2 = knn_transfer(&tokens[0], &internal, &external, 2, &mut rng);
    let (a, b) = (
        external.get(order[0].1).unwrap(),
        external.get(order[1].1).unwrap(),
    );
    let mean: Vec<f64> = a.iter().zip(b).map(|(x, y)| (x + y) / 2.0).collect();
    check(
        k2.vector == mean,
        format!("k=2 gave {:?}, expected {mean:?}", k2.vector),
    )?;
    check(
        DEFAULT_KNN_K == 5 && InitConfig::default().knn_k == 5,
        "pipeline default k is not 5",
    )?;
    Ok("k=1 copies nearest neighbour, k=2 is the exact mean, default k=5".into())
}

// ---------------------------------------------------------------- skip-gram

fn skipgram_sanity() -> Outcome {
    let start = Instant::now();
    let mut wins = 0;
    let mut rows = Vec::new();
    for seed in 1..=5 {
        let spec = PlantSpec {
            n_problems: 5,
            n_targets_per_kind: 15,
            n_patients: 50,
            encounters_per_patient: 4,
            p_in: 1.0,
            p_out: 0.0,
            seed,
            negatives_per_kind: 5,
            ..PlantSpec::default()
        };
        let data = generate(&spec).unwrap();
        assert_eq!(data.store.len(), 200);
        let vocab = data.store.build_vocabulary(1);
        let table = train_skipgram(
            &data.store,
            &vocab,
            &SkipGramConfig {
                dim: 32,
                epochs: 20,
                seed,
                ..SkipGramConfig::default()
            },
        )
        .unwrap();
        // block members of problems that occur in the corpus
        let blocks: Vec<Vec<Code>> = data
            .truth
            .values()
            .map(|row| row.values().flatten().cloned().collect::<Vec<_>>())
            .filter(|b| b.iter().all(|c| table.get_code(c).is_some()))
            .collect();
        let cos =
            |a: &Code, b: &Code| cosine(table.get_code(a).unwrap(), table.get_code(b).unwrap());
        let mut always = Vec::new();
        let mut never = Vec::new();
        for (i, bi) in blocks.iter().enumerate() {
            for (j, bj) in blocks.iter().enumerate() {
                for a in bi {
                    for b in bj {
                        if a < b {
                            if i == j {
                                always.push(cos(a, b));
                            } else {
                                never.push(cos(a, b));
                            }
                        }
                    }
                }
            }
        }
        let min_always = always.iter().copied().fold(f64::INFINITY, f64::min);
        let max_never = never.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !always.is_empty() && !never.is_empty() && min_always > max_never {
            wins += 1;
        }
        rows.push(format!("{min_always:.2}>{max_never:.2}"));
    }
    let detail = format!("min always vs max never cosine [{}]", rows.join(", "));
    check(wins >= 4, format!("{wins}/5 seeds; {detail}"))?;
    within(start.elapsed(), Duration::from_secs(30))?;
    Ok(format!(
        "{wins}/5 seeds; {detail} ({:.1?})",
        start.elapsed()
    ))
}

// ---------------------------------------------------------------- co-occurrence

fn cooccurrence_chain() -> Outcome {
    let mut pairs = 0usize;
    for seed in 0..50u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p_in = rng.gen_range(0.3..1.0);
        let spec = PlantSpec {
            n_problems: rng.gen_range(2..5),
            n_targets_per_kind: 15,
            n_patients: rng.gen_range(10..40),
            encounters_per_patient: rng.gen_range(1..6),
            p_in,
            p_out: rng.gen_range(0.0..p_in * 0.5),
            explicit_link_fraction: rng.gen_range(0.0..1.0),
            n_facilities: rng.gen_range(1..4),
            negatives_per_kind: 3,
            seed,
            ..PlantSpec::default()
        };
        let data = generate(&spec).unwrap();
        let problems: Vec<&Problem> = data.kb.problems().collect();
        let counts = CooccurrenceCounts::compute(&data.store, problems.iter().copied());
        for p in &problems {
            for kind in RelationKind::ALL {
                for i in 0..spec.n_targets_per_kind {
                    let t = target_code(kind, i);
                    let v: Vec<f64> = CoocDefinition::ALL
                        .iter()
                        .map(|d| counts.value(&p.id, &t, *d))
                        .collect();
                    check(
                        v.windows(2).all(|w| w[0] <= w[1])
                            && v.iter().all(|x| (0.0..=1.0).contains(x)),
                        format!("seed {seed} {} {t}: {v:?}", p.id),
                    )?;
                    pairs += 1;
                }
            }
        }
    }
    Ok(format!("nested on all {pairs} pairs across 50 stores"))
}

// ---------------------------------------------------------------- kappa

fn kappa() -> Outcome {
    let bits = |v: &[u8]| {
        v.iter()
            .map(|&b| Label::from_bit(b).unwrap())
            .collect::<Vec<_>>()
    };
    let a = bits(&[1, 0, 1, 1, 0, 0, 1, 0]);
    let k = cohen_kappa(&a, &a).map_err(|e| e.to_string())?;
    check(k == 1.0, format!("identical sequences gave {k}"))?;
    let comp: Vec<Label> = a
        .iter()
        .map(|l| Label::from_bit(1 - l.bit()).unwrap())
        .collect();
    let k = cohen_kappa(&a, &comp).map_err(|e| e.to_string())?;
    check(k == -1.0, format!("complement gave {k}"))?;

    // 2x2 table: both 1: 20, a only: 5, b only: 10, neither: 15
    let (n11, n10, n01, n00) = (20usize, 5usize, 10usize, 15usize);
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (n, x, y) in [(n11, 1, 1), (n10, 1, 0), (n01, 0, 1), (n00, 0, 0)] {
        xs.extend(bits(&vec![x; n]));
        ys.extend(bits(&vec![y; n]));
    }
    let n = (n11 + n10 + n01 + n00) as f64;
    let po = (n11 + n00) as f64 / n;
    let pe = ((n11 + n10) as f64 / n) * ((n11 + n01) as f64 / n)
        + ((n01 + n00) as f64 / n) * ((n10 + n00) as f64 / n);
    let want = (po - pe) / (1.0 - pe);
    let got = cohen_kappa(&xs, &ys).map_err(|e| e.to_string())?;
    check(
        (got - want).abs() <= 1e-12,
        format!("2x2 table: {got} vs {want}"),
    )?;
    Ok(format!(
        "identical 1.0, complement -1.0, 2x2 table {got:.6}"
    ))
}

// ---------------------------------------------------------------- determinism

fn run_pipeline(dir: &Path) -> Result<(), String> {
    let d = dir.to_str().unwrap();
    let steps: [&[&str]; 10] = [
        &["synth"],
        &["vocab"],
        &["features"],
        &["candidates", "--top-n", "10"],
        &["train-embeddings", "--dim", "8", "--epochs", "1"],
        &["init-model"],
        &["train", "--max-epochs", "30"],
        &["eval"],
        &["baseline-eval"],
        &["suggest"],
    ];
    for step in steps {
        let mut argv = vec!["pomr", "--quiet", "--json", "--seed", "3", "--data-dir", d];
        argv.extend_from_slice(step);
        let code = pomr::cli::run(argv);
        check(code == 0, format!("`{}` exited {code}", step.join(" ")))?;
    }
    Ok(())
}

fn artifacts(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(
                    p.strip_prefix(dir).unwrap().display().to_string(),
                    std::fs::read(&p).unwrap(),
                );
            }
        }
    }
    out
}

fn determinism() -> Outcome {
    let start = Instant::now();
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    run_pipeline(a.path())?;
    run_pipeline(b.path())?;
    let (fa, fb) = (artifacts(a.path()), artifacts(b.path()));
    check(fa.keys().eq(fb.keys()), "runs produced different file sets")?;
    let json: BTreeSet<&String> = fa
        .keys()
        .filter(|k| k.ends_with(".json") || k.ends_with(".jsonl"))
        .collect();
    for (name, bytes) in &fa {
        check(&fb[name] == bytes, format!("{name} differs between runs"))?;
    }
    Ok(format!(
        "{} files ({} JSON) byte-identical across two runs ({:.1?})",
        fa.len(),
        json.len(),
        start.elapsed()
    ))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 11] = [
        ("scoring exactness", scoring_exactness),
        ("gradient oracle", gradient_oracle),
        ("median tie rank", median_tie_rank),
        ("metric oracle", metric_oracle),
        ("planted-structure learning", planted_learning),
        ("held-out-problem generalization", held_out_problems),
        ("k-NN transfer", knn),
        ("skip-gram sanity", skipgram_sanity),
        ("co-occurrence chain", cooccurrence_chain),
        ("Cohen's kappa", kappa),
        ("CLI determinism", determinism),
    ];
    let mut failed = 0;
    for (name, f) in criteria {
        let outcome = std::panic::catch_unwind(f).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or(p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default())
        });
        match outcome {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL  {name}: {why}");
            }
        }
    }
    println!(
        "\n{} of {} acceptance criteria passed",
        criteria.len() - failed,
        criteria.len()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
