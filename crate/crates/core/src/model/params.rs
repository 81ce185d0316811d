use std::collections::{BTreeMap, BTreeSet, HashMap};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::code::{Code, RelationKind};
use crate::embedding::{
    init_problem_embedding, knn_transfer, random_vector, EmbeddingTable, SourceTag, Weighting,
};
use crate::encounters::{Vocabulary, FEATURE_NAMES};
use crate::error::{Error, Result};
use crate::kb::KnowledgeBase;

/// Independently trainable parameter groups.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamGroup {
    Problems,
    Targets,
    Relations,
    SpecRelations,
    Head,
}

impl ParamGroup {
    pub const ALL: [ParamGroup; 5] = [
        ParamGroup::Problems,
        ParamGroup::Targets,
        ParamGroup::Relations,
        ParamGroup::SpecRelations,
        ParamGroup::Head,
    ];
}

/// `true` marks a group as frozen.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FreezeFlags {
    pub problems: bool,
    pub targets: bool,
    pub relations: bool,
    pub spec_relations: bool,
    pub head: bool,
}

impl FreezeFlags {
    pub fn all() -> Self {
        FreezeFlags {
            problems: true,
            targets: true,
            relations: true,
            spec_relations: true,
            head: true,
        }
    }

    pub fn is_frozen(&self, group: ParamGroup) -> bool {
        match group {
            ParamGroup::Problems => self.problems,
            ParamGroup::Targets => self.targets,
            ParamGroup::Relations => self.relations,
            ParamGroup::SpecRelations => self.spec_relations,
            ParamGroup::Head => self.head,
        }
    }
}

/// Embedding tables, relation vectors, specialty relation vectors and the
/// linear head, stored as flat row-major buffers.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    dim: usize,
    spec_dim: usize,
    problem_ids: Vec<String>,
    problem_index: HashMap<String, usize>,
    targets: Vec<(RelationKind, Code)>,
    target_index: HashMap<Code, usize>,
    problems: Vec<f64>,
    target_emb: Vec<f64>,
    relations: Vec<f64>,
    spec_relations: Vec<f64>,
    head: Vec<f64>,
    pub freeze: FreezeFlags,
}

impl ModelParams {
    /// Zero embeddings, all-ones relations, head `(1, 0, .., 0)`.
    pub fn new(
        dim: usize,
        spec_dim: usize,
        n_features: usize,
        problem_ids: Vec<String>,
        targets: Vec<(RelationKind, Code)>,
    ) -> Self {
        let mut head = vec![0.0; 2 + n_features];
        head[0] = 1.0;
        let problem_index = problem_ids
            .iter()
            .enumerate()
            .map(|(i, p)| (p.clone(), i))
            .collect();
        let target_index = targets
            .iter()
            .enumerate()
            .map(|(i, (_, c))| (c.clone(), i))
            .collect();
        ModelParams {
            dim,
            spec_dim,
            problems: vec![0.0; problem_ids.len() * dim],
            target_emb: vec![0.0; targets.len() * dim],
            relations: vec![1.0; RelationKind::ALL.len() * dim],
            spec_relations: vec![1.0; RelationKind::ALL.len() * spec_dim],
            head,
            problem_ids,
            problem_index,
            targets,
            target_index,
            freeze: FreezeFlags::default(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn spec_dim(&self) -> usize {
        self.spec_dim
    }

    pub fn n_features(&self) -> usize {
        self.head.len() - 2
    }

    pub fn problem_ids(&self) -> &[String] {
        &self.problem_ids
    }

    pub fn targets(&self) -> &[(RelationKind, Code)] {
        &self.targets
    }

    pub fn targets_of(&self, kind: RelationKind) -> impl Iterator<Item = &Code> {
        self.targets
            .iter()
            .filter(move |(k, _)| *k == kind)
            .map(|(_, c)| c)
    }

    pub fn problem_idx(&self, id: &str) -> Option<usize> {
        self.problem_index.get(id).copied()
    }

    pub fn target_idx(&self, code: &Code) -> Option<usize> {
        self.target_index.get(code).copied()
    }

    pub fn problem_vec(&self, i: usize) -> &[f64] {
        &self.problems[i * self.dim..(i + 1) * self.dim]
    }

    pub fn problem_vec_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.problems[i * self.dim..(i + 1) * self.dim]
    }

    pub fn target_vec(&self, i: usize) -> &[f64] {
        &self.target_emb[i * self.dim..(i + 1) * self.dim]
    }

    pub fn target_vec_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.target_emb[i * self.dim..(i + 1) * self.dim]
    }

    pub fn problem_embedding(&self, id: &str) -> Option<&[f64]> {
        self.problem_idx(id).map(|i| self.problem_vec(i))
    }

    pub fn target_embedding(&self, code: &Code) -> Option<&[f64]> {
        self.target_idx(code).map(|i| self.target_vec(i))
    }

    pub fn relation(&self, kind: RelationKind) -> &[f64] {
        let k = kind.index();
        &self.relations[k * self.dim..(k + 1) * self.dim]
    }

    pub fn relation_mut(&mut self, kind: RelationKind) -> &mut [f64] {
        let k = kind.index();
        &mut self.relations[k * self.dim..(k + 1) * self.dim]
    }

    pub fn spec_relation(&self, kind: RelationKind) -> &[f64] {
        let k = kind.index();
        &self.spec_relations[k * self.spec_dim..(k + 1) * self.spec_dim]
    }

    pub fn head(&self) -> &[f64] {
        &self.head
    }

    pub fn values(&self, group: ParamGroup) -> &[f64] {
        match group {
            ParamGroup::Problems => &self.problems,
            ParamGroup::Targets => &self.target_emb,
            ParamGroup::Relations => &self.relations,
            ParamGroup::SpecRelations => &self.spec_relations,
            ParamGroup::Head => &self.head,
        }
    }

    pub fn values_mut(&mut self, group: ParamGroup) -> &mut [f64] {
        match group {
            ParamGroup::Problems => &mut self.problems,
            ParamGroup::Targets => &mut self.target_emb,
            ParamGroup::Relations => &mut self.relations,
            ParamGroup::SpecRelations => &mut self.spec_relations,
            ParamGroup::Head => &mut self.head,
        }
    }

    pub fn is_finite(&self) -> bool {
        ParamGroup::ALL
            .iter()
            .all(|g| self.values(*g).iter().all(|x| x.is_finite()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&ParamsFile::from(self)).expect("params serialize")
    }
}

#[derive(Serialize, Deserialize)]
struct ProblemRow {
    id: String,
    vector: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct TargetRow {
    kind: RelationKind,
    code: Code,
    vector: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct ParamsFile {
    dim: usize,
    spec_dim: usize,
    problems: Vec<ProblemRow>,
    targets: Vec<TargetRow>,
    relations: BTreeMap<RelationKind, Vec<f64>>,
    spec_relations: BTreeMap<RelationKind, Vec<f64>>,
    head: Vec<f64>,
    freeze: FreezeFlags,
}

impl From<&ModelParams> for ParamsFile {
    fn from(p: &ModelParams) -> Self {
        ParamsFile {
            dim: p.dim,
            spec_dim: p.spec_dim,
            problems: p
                .problem_ids
                .iter()
                .enumerate()
                .map(|(i, id)| ProblemRow {
                    id: id.clone(),
                    vector: p.problem_vec(i).to_vec(),
                })
                .collect(),
            targets: p
                .targets
                .iter()
                .enumerate()
                .map(|(i, (kind, code))| TargetRow {
                    kind: *kind,
                    code: code.clone(),
                    vector: p.target_vec(i).to_vec(),
                })
                .collect(),
            relations: RelationKind::ALL
                .iter()
                .map(|k| (*k, p.relation(*k).to_vec()))
                .collect(),
            spec_relations: RelationKind::ALL
                .iter()
                .map(|k| (*k, p.spec_relation(*k).to_vec()))
                .collect(),
            head: p.head.clone(),
            freeze: p.freeze,
        }
    }
}

impl TryFrom<ParamsFile> for ModelParams {
    type Error = Error;

    fn try_from(f: ParamsFile) -> Result<Self> {
        if f.head.len() < 2 {
            return Err(Error::Config("head needs at least 2 weights".into()));
        }
        let mut p = ModelParams::new(
            f.dim,
            f.spec_dim,
            f.head.len() - 2,
            f.problems.iter().map(|r| r.id.clone()).collect(),
            f.targets.iter().map(|r| (r.kind, r.code.clone())).collect(),
        );
        let check = |v: &[f64], n: usize| {
            if v.len() == n {
                Ok(())
            } else {
                Err(Error::LengthMismatch {
                    expected: n,
                    found: v.len(),
                })
            }
        };
        for (i, r) in f.problems.iter().enumerate() {
            check(&r.vector, f.dim)?;
            p.problem_vec_mut(i).copy_from_slice(&r.vector);
        }
        for (i, r) in f.targets.iter().enumerate() {
            check(&r.vector, f.dim)?;
            p.target_vec_mut(i).copy_from_slice(&r.vector);
        }
        for k in RelationKind::ALL {
            let rel = f
                .relations
                .get(&k)
                .ok_or_else(|| Error::Config(format!("missing relation {k}")))?;
            check(rel, f.dim)?;
            p.relation_mut(k).copy_from_slice(rel);
            let spec = f
                .spec_relations
                .get(&k)
                .ok_or_else(|| Error::Config(format!("missing spec relation {k}")))?;
            check(spec, f.spec_dim)?;
            let d = f.spec_dim;
            p.spec_relations[k.index() * d..(k.index() + 1) * d].copy_from_slice(spec);
        }
        p.head = f.head;
        p.freeze = f.freeze;
        if p.problem_index.len() != p.problem_ids.len() || p.target_index.len() != p.targets.len() {
            return Err(Error::Config(
                "duplicate problem or target in parameter file".into(),
            ));
        }
        Ok(p)
    }
}

impl Serialize for ModelParams {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        ParamsFile::from(self).serialize(s)
    }
}

impl<'de> Deserialize<'de> for ModelParams {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let file = ParamsFile::deserialize(d)?;
        ModelParams::try_from(file).map_err(serde::de::Error::custom)
    }
}

/// Where initial embeddings come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum InitSource {
    /// Everything drawn at random.
    Random,
    /// External table; missing codes random; problems frequency-weighted.
    External,
    /// Site-trained table; problems use the unweighted mean.
    SiteSpecific,
    /// External table, with codes it lacks filled in by nearest-neighbour
    /// transfer from the site-trained table.
    Combined,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InitConfig {
    pub source: InitSource,
    /// Used when no table fixes the dimension.
    pub dim: usize,
    pub knn_k: usize,
    pub seed: u64,
}

impl Default for InitConfig {
    fn default() -> Self {
        InitConfig {
            source: InitSource::Random,
            dim: 32,
            knn_k: crate::embedding::DEFAULT_KNN_K,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct InitReport {
    pub random_targets: usize,
    pub random_problems: usize,
    pub transferred: usize,
    pub warnings: Vec<String>,
}

/// External vectors plus transferred vectors for every internal token the
/// external table lacks.
pub fn combine_tables(
    internal: &EmbeddingTable,
    external: &EmbeddingTable,
    k: usize,
    rng: &mut ChaCha8Rng,
    report: &mut InitReport,
) -> Result<EmbeddingTable> {
    let mut out = EmbeddingTable::new(external.dim(), SourceTag::Combined);
    for (t, v) in external.iter() {
        out.insert(t, v.to_vec())?;
    }
    for t in internal.tokens() {
        if external.contains(t) {
            continue;
        }
        let init = knn_transfer(t, internal, external, k, rng);
        if let Some(w) = init.warning {
            report.warnings.push(w);
        }
        if !init.random {
            report.transferred += 1;
            out.insert(t, init.vector)?;
        }
    }
    Ok(out)
}

/// Every target the model should embed: the vocabulary's targets plus any
/// KB target the vocabulary lacks.
pub fn model_targets(
    kb: &KnowledgeBase,
    vocab: &Vocabulary,
) -> BTreeMap<RelationKind, BTreeSet<Code>> {
    let mut out = kb.targets();
    for (kind, code) in vocab.all_targets() {
        out.entry(kind).or_default().insert(code.clone());
    }
    out
}

/// Build initial parameters for every KB problem and every target in
/// `targets` (normally the vocabulary plus KB targets).
pub fn initialize(
    kb: &KnowledgeBase,
    targets: &BTreeMap<RelationKind, BTreeSet<Code>>,
    external: Option<&EmbeddingTable>,
    internal: Option<&EmbeddingTable>,
    frequencies: &BTreeMap<Code, u64>,
    spec_dim: usize,
    cfg: &InitConfig,
) -> Result<(ModelParams, InitReport)> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut report = InitReport::default();
    fn need<'t>(
        t: Option<&'t EmbeddingTable>,
        source: InitSource,
        what: &str,
    ) -> Result<&'t EmbeddingTable> {
        t.ok_or_else(|| Error::Config(format!("{source:?} initialization needs {what}")))
    }
    let combined;
    let (table, weighting): (Option<&EmbeddingTable>, Weighting) = match cfg.source {
        InitSource::Random => (None, Weighting::Uniform),
        InitSource::External => (
            Some(need(external, cfg.source, "an external table")?),
            Weighting::Frequency,
        ),
        InitSource::SiteSpecific => (
            Some(need(internal, cfg.source, "a site-specific table")?),
            Weighting::Uniform,
        ),
        InitSource::Combined => {
            let ext = need(external, cfg.source, "an external table")?;
            let int = need(internal, cfg.source, "a site-specific table")?;
            combined = combine_tables(int, ext, cfg.knn_k, &mut rng, &mut report)?;
            (Some(&combined), Weighting::Frequency)
        }
    };
    let dim = table.map_or(cfg.dim, EmbeddingTable::dim);

    let target_list: Vec<(RelationKind, Code)> = targets
        .iter()
        .flat_map(|(k, set)| set.iter().map(move |c| (*k, c.clone())))
        .collect();
    let problem_ids: Vec<String> = kb.problem_ids().into_iter().map(str::to_string).collect();
    let mut params = ModelParams::new(dim, spec_dim, FEATURE_NAMES.len(), problem_ids, target_list);

    for i in 0..params.targets.len() {
        let code = params.targets[i].1.clone();
        let v = match table.and_then(|t| t.get_code(&code)) {
            Some(v) => v.to_vec(),
            None => {
                report.random_targets += 1;
                random_vector(&mut rng, dim)
            }
        };
        params.target_vec_mut(i).copy_from_slice(&v);
    }
    for (i, problem) in kb.problems().enumerate() {
        let v = match table {
            Some(t) => {
                let init = init_problem_embedding(problem, t, weighting, frequencies, &mut rng);
                if init.random {
                    report.random_problems += 1;
                    report.warnings.extend(init.warning);
                }
                init.vector
            }
            None => {
                report.random_problems += 1;
                random_vector(&mut rng, dim)
            }
        };
        params.problem_vec_mut(i).copy_from_slice(&v);
    }
    Ok((params, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kb::Problem;

    fn kb() -> KnowledgeBase {
        let p = |id: &str, c: &str| Problem {
            id: id.into(),
            name: id.into(),
            definition: [c.parse().unwrap()].into_iter().collect(),
        };
        KnowledgeBase::new(vec![p("A", "ICD9:1"), p("B", "ICD9:2")], vec![]).unwrap()
    }

    fn targets() -> BTreeMap<RelationKind, BTreeSet<Code>> {
        [
            (
                RelationKind::Medication,
                ["RXNORM:1", "RXNORM:2"]
                    .iter()
                    .map(|c| c.parse().unwrap())
                    .collect(),
            ),
            (
                RelationKind::Lab,
                ["LOINC:1"].iter().map(|c| c.parse().unwrap()).collect(),
            ),
        ]
        .into()
    }

    #[test]
    fn fresh_params_contract() {
        let (p, report) = initialize(
            &kb(),
            &targets(),
            None,
            None,
            &BTreeMap::new(),
            4,
            &InitConfig::default(),
        )
        .unwrap();
        assert_eq!(p.dim(), 32);
        assert_eq!(p.head(), &[1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        assert!(p.relation(RelationKind::Lab).iter().all(|&x| x == 1.0));
        assert!(p
            .spec_relation(RelationKind::Medication)
            .iter()
            .all(|&x| x == 1.0));
        assert_eq!(report.random_targets, 3);
        assert_eq!(report.random_problems, 2);
        assert_eq!(p.targets_of(RelationKind::Medication).count(), 2);
        assert!(p.is_finite());
    }

    #[test]
    fn external_and_combined_sources() {
        let mut ext = EmbeddingTable::new(2, SourceTag::External);
        ext.insert("RXNORM:1", vec![1.0, 0.0]).unwrap();
        ext.insert("ICD9:1", vec![0.0, 1.0]).unwrap();
        let mut int = EmbeddingTable::new(3, SourceTag::SiteSpecific);
        int.insert("RXNORM:1", vec![1.0, 0.0, 0.0]).unwrap();
        int.insert("RXNORM:2", vec![0.9, 0.1, 0.0]).unwrap();

        let cfg = InitConfig {
            source: InitSource::External,
            ..Default::default()
        };
        let (p, report) = initialize(
            &kb(),
            &targets(),
            Some(&ext),
            Some(&int),
            &BTreeMap::new(),
            0,
            &cfg,
        )
        .unwrap();
        assert_eq!(
            p.target_embedding(&"RXNORM:1".parse().unwrap()).unwrap(),
            &[1.0, 0.0]
        );
        assert_eq!(p.problem_embedding("A").unwrap(), &[0.0, 1.0]);
        assert_eq!(report.random_targets, 2);

        let cfg = InitConfig {
            source: InitSource::Combined,
            knn_k: 1,
            ..Default::default()
        };
        let (p, report) = initialize(
            &kb(),
            &targets(),
            Some(&ext),
            Some(&int),
            &BTreeMap::new(),
            0,
            &cfg,
        )
        .unwrap();
        assert_eq!(
            p.target_embedding(&"RXNORM:2".parse().unwrap()).unwrap(),
            &[1.0, 0.0]
        );
        assert_eq!(report.transferred, 1);
        assert_eq!(report.random_targets, 1);

        let cfg = InitConfig {
            source: InitSource::SiteSpecific,
            ..Default::default()
        };
        assert!(initialize(&kb(), &targets(), None, None, &BTreeMap::new(), 0, &cfg).is_err());
    }

    #[test]
    fn json_round_trip_is_bit_exact() {
        let (mut p, _) = initialize(
            &kb(),
            &targets(),
            None,
            None,
            &BTreeMap::new(),
            3,
            &InitConfig::default(),
        )
        .unwrap();
        p.values_mut(ParamGroup::Head)[3] = 0.1 + 0.2;
        p.values_mut(ParamGroup::Targets)[0] = f64::MIN_POSITIVE / 3.0;
        p.freeze.targets = true;
        let again: ModelParams = serde_json::from_str(&p.to_json()).unwrap();
        assert_eq!(again, p);
        for g in ParamGroup::ALL {
            let a: Vec<u64> = p.values(g).iter().map(|x| x.to_bits()).collect();
            let b: Vec<u64> = again.values(g).iter().map(|x| x.to_bits()).collect();
            assert_eq!(a, b);
        }
    }
}
