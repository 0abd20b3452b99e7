use std::collections::{BTreeMap, BTreeSet, HashSet};

use rand::seq::{index, SliceRandom};
use serde::{Deserialize, Serialize};

use super::{normalize_ws, parse_clauses, serialize_clauses, subsample_fewshot, Example, Label, TaskKind};
use crate::error::{Error, Result};
use crate::rng::rng_for;

/// Split a label universe into `n_stages` disjoint sets of near-equal size.
/// The first `len % n_stages` stages get one extra label.
pub fn split_stages(labels: &[Label], n_stages: usize, seed: u64) -> Result<Vec<Vec<Label>>> {
    let unique: BTreeSet<&Label> = labels.iter().collect();
    if unique.len() != labels.len() {
        return Err(Error::InvalidSplit("duplicate labels in universe".into()));
    }
    if n_stages < 1 || n_stages > labels.len() {
        return Err(Error::InvalidSplit(format!(
            "cannot split {} labels into {n_stages} stages",
            labels.len()
        )));
    }
    let mut shuffled = labels.to_vec();
    shuffled.shuffle(&mut rng_for(seed, "split_stages"));
    let base = labels.len() / n_stages;
    let extra = labels.len() % n_stages;
    let mut out = Vec::with_capacity(n_stages);
    let mut it = shuffled.into_iter();
    for k in 0..n_stages {
        let size = base + usize::from(k < extra);
        out.push(it.by_ref().take(size).collect());
    }
    Ok(out)
}

/// True when `candidate` is a valid stage-fused label set for the given
/// training stages: not contained in any one stage, and touching every stage.
pub fn is_valid_fused(candidate: &BTreeSet<&Label>, stages: &[Vec<Label>]) -> bool {
    let touches_all = stages.iter().all(|s| s.iter().any(|l| candidate.contains(l)));
    let inside_one = stages.iter().any(|s| candidate.iter().all(|l| s.contains(l)));
    touches_all && !inside_one
}

/// Rejection-sample `n_fused` label sets of the given size that satisfy the
/// stage-fused constraints. Labels inside each set are ordered by stage, then
/// by position within the stage.
pub fn build_fused_labelsets(
    stages: &[Vec<Label>],
    n_fused: usize,
    size: usize,
    seed: u64,
) -> Result<Vec<Vec<Label>>> {
    if stages.len() < 2 {
        return Err(Error::InfeasibleFused("need at least two training stages".into()));
    }
    let union: Vec<&Label> = stages.iter().flatten().collect();
    if size > union.len() {
        return Err(Error::InfeasibleFused(format!("size {size} exceeds {} seen labels", union.len())));
    }
    if size < stages.len() {
        return Err(Error::InfeasibleFused(format!(
            "size {size} cannot touch all {} stages",
            stages.len()
        )));
    }
    let mut rng = rng_for(seed, "fused");
    let mut found: Vec<Vec<Label>> = Vec::new();
    let mut seen: HashSet<Vec<Label>> = HashSet::new();
    const MAX_ATTEMPTS: usize = 200_000;
    for _ in 0..MAX_ATTEMPTS {
        if found.len() == n_fused {
            break;
        }
        let pick: BTreeSet<&Label> = index::sample(&mut rng, union.len(), size).into_iter().map(|i| union[i]).collect();
        if !is_valid_fused(&pick, stages) {
            continue;
        }
        // `union` is already in stage-then-position order.
        let ordered: Vec<Label> = union.iter().filter(|l| pick.contains(*l)).map(|l| (*l).clone()).collect();
        if seen.insert(ordered.clone()) {
            found.push(ordered);
        }
    }
    if found.is_empty() {
        return Err(Error::InfeasibleFused("rejection sampling found no valid set".into()));
    }
    // Fewer distinct valid sets than requested: repeat in order.
    let distinct = found.len();
    for i in distinct..n_fused {
        found.push(found[i % distinct].clone());
    }
    Ok(found)
}

/// Restrict an example to a label set. Single-label examples are kept only
/// when their label is in the set; sequence-labelling examples lose the
/// clauses whose type is outside the set.
pub fn project_example(example: &Example, label_set: &[Label]) -> Option<Example> {
    match example.task_kind {
        TaskKind::SingleClass | TaskKind::Relation => {
            let labels = example.labels().ok()?;
            labels.iter().all(|l| label_set.contains(l)).then(|| example.clone())
        }
        TaskKind::SequenceLabel => {
            let clauses = parse_clauses(&example.target).ok()?;
            let kept: Vec<_> = clauses.into_iter().filter(|c| label_set.contains(&c.label)).collect();
            Some(Example {
                input: example.input.clone(),
                target: serialize_clauses(&kept),
                task_kind: example.task_kind,
            })
        }
    }
}

fn project_all(pool: &[Example], label_set: &[Label], drop_empty: bool) -> Vec<Example> {
    pool.iter()
        .filter_map(|e| project_example(e, label_set))
        .filter(|e| !drop_empty || normalize_ws(&e.target) != super::NONE_TARGET)
        .collect()
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Stage {
    /// 1-based stage number.
    pub index: usize,
    pub labels: Vec<Label>,
    pub train: Vec<Example>,
    pub validation: Vec<Example>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FusedTest {
    pub labels: Vec<Label>,
    pub test: Vec<Example>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PlanOptions {
    pub n_stages: usize,
    pub shots_train: usize,
    pub shots_val: usize,
    pub shots_test: usize,
    pub n_fused: usize,
    pub fused_size: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StagePlan {
    pub task_kind: TaskKind,
    pub stages: Vec<Stage>,
    pub specific_tests: Vec<Vec<Example>>,
    pub agnostic_tests: Vec<Vec<Example>>,
    pub fused_tests: Vec<FusedTest>,
    pub options: PlanOptions,
    pub warnings: Vec<String>,
}

impl StagePlan {
    /// Labels seen up to and including stage `k` (0-based), in stage order.
    pub fn seen_labels(&self, k: usize) -> Vec<Label> {
        self.stages[..=k].iter().flat_map(|s| s.labels.iter().cloned()).collect()
    }

    pub fn all_labels(&self) -> Vec<Label> {
        self.seen_labels(self.stages.len() - 1)
    }

    /// 0-based stage that owns `label`.
    pub fn stage_of(&self, label: &Label) -> Option<usize> {
        self.stages.iter().position(|s| s.labels.contains(label))
    }

    pub fn stage_label_sets(&self) -> Vec<Vec<Label>> {
        self.stages.iter().map(|s| s.labels.clone()).collect()
    }

    /// Structural checks: disjoint stages, stage data inside stage labels,
    /// valid fused sets, agnostic tests covering all seen labels.
    pub fn validate(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for s in &self.stages {
            for l in &s.labels {
                if !seen.insert(l) {
                    return Err(Error::InvalidSplit(format!("label {l} appears in two stages")));
                }
            }
            for e in s.train.iter().chain(&s.validation) {
                if !e.labels()?.iter().all(|l| s.labels.contains(l)) {
                    return Err(Error::InvalidSplit(format!("stage {} example outside its labels", s.index)));
                }
            }
        }
        let sets = self.stage_label_sets();
        for f in &self.fused_tests {
            let pick: BTreeSet<&Label> = f.labels.iter().collect();
            if !is_valid_fused(&pick, &sets) {
                return Err(Error::InfeasibleFused(format!("invalid fused set {:?}", f.labels)));
            }
        }
        for (k, test) in self.agnostic_tests.iter().enumerate() {
            let covered: BTreeSet<Label> = test.iter().flat_map(|e| e.labels().unwrap_or_default()).collect();
            if let Some(l) = self.seen_labels(k).iter().find(|l| !covered.contains(*l)) {
                return Err(Error::InvalidSplit(format!("agnostic test {} lacks label {l}", k + 1)));
            }
        }
        Ok(())
    }
}

/// Materialise a staged plan from train/validation/test pools.
pub fn build_plan(
    task_kind: TaskKind,
    universe: &[Label],
    train_pool: &[Example],
    val_pool: &[Example],
    test_pool: &[Example],
    opts: &PlanOptions,
) -> Result<StagePlan> {
    let sets = split_stages(universe, opts.n_stages, opts.seed)?;
    let mut warnings = Vec::new();
    let mut sample = |pool: &[Example], set: &[Label], shots: usize, tag: &str| {
        let drop_empty = task_kind == TaskKind::SequenceLabel;
        let projected = project_all(pool, set, drop_empty);
        let s = subsample_fewshot(&projected, shots, crate::rng::derive_seed(opts.seed, tag));
        warnings.extend(s.warnings.into_iter().map(|w| format!("{tag}: {w}")));
        s.examples
    };

    let mut stages = Vec::with_capacity(sets.len());
    let mut specific_tests = Vec::with_capacity(sets.len());
    let mut agnostic_tests = Vec::with_capacity(sets.len());
    for (k, set) in sets.iter().enumerate() {
        let train = sample(train_pool, set, opts.shots_train, &format!("train{k}"));
        let validation = sample(val_pool, set, opts.shots_val, &format!("val{k}"));
        stages.push(Stage { index: k + 1, labels: set.clone(), train, validation });
        specific_tests.push(sample(test_pool, set, opts.shots_test, &format!("specific{k}")));
        let seen: Vec<Label> = sets[..=k].iter().flatten().cloned().collect();
        agnostic_tests.push(sample(test_pool, &seen, opts.shots_test, &format!("agnostic{k}")));
    }

    let mut fused_tests = Vec::new();
    if sets.len() >= 2 && opts.n_fused > 0 {
        for (j, labels) in build_fused_labelsets(&sets, opts.n_fused, opts.fused_size, opts.seed)?.into_iter().enumerate() {
            let test = sample(test_pool, &labels, opts.shots_test, &format!("fused{j}"));
            fused_tests.push(FusedTest { labels, test });
        }
    }

    let mut dedup = BTreeMap::new();
    for w in warnings {
        dedup.insert(w, ());
    }
    let plan = StagePlan {
        task_kind,
        stages,
        specific_tests,
        agnostic_tests,
        fused_tests,
        options: opts.clone(),
        warnings: dedup.into_keys().collect(),
    };
    plan.validate()?;
    Ok(plan)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::labels;

    fn universe(n: usize) -> Vec<Label> {
        (0..n).map(|i| Label::new(&format!("l{i:02}")).unwrap()).collect()
    }

    #[test]
    fn split_sizes_differ_by_at_most_one() {
        let s = split_stages(&universe(41), 5, 1).unwrap();
        let sizes: Vec<usize> = s.iter().map(Vec::len).collect();
        assert_eq!(sizes, vec![9, 8, 8, 8, 8]);
    }

    #[test]
    fn single_stage_is_identity_split() {
        let u = labels(&["a", "b"]);
        let s = split_stages(&u, 1, 5).unwrap();
        assert_eq!(s.len(), 1);
        let got: BTreeSet<_> = s[0].iter().collect();
        assert_eq!(got, u.iter().collect());
    }

    #[test]
    fn split_is_disjoint_and_covering() {
        let u = labels(&["a", "b", "c", "d"]);
        for seed in 0..20 {
            let s = split_stages(&u, 2, seed).unwrap();
            assert_eq!(s.len(), 2);
            assert!(s.iter().all(|x| x.len() == 2));
            // exhaustive pairwise disjointness and union coverage
            for l in &u {
                assert_eq!(s.iter().filter(|x| x.contains(l)).count(), 1);
            }
        }
    }

    #[test]
    fn invalid_splits() {
        assert!(matches!(split_stages(&universe(3), 0, 1), Err(Error::InvalidSplit(_))));
        assert!(matches!(split_stages(&universe(3), 4, 1), Err(Error::InvalidSplit(_))));
    }

    #[test]
    fn fused_definition_by_inspection() {
        let stages = vec![labels(&["a", "b"]), labels(&["c", "d"])];
        let ac = labels(&["a", "c"]);
        let ab = labels(&["a", "b"]);
        assert!(is_valid_fused(&ac.iter().collect(), &stages));
        assert!(!is_valid_fused(&ab.iter().collect(), &stages));
        let got = build_fused_labelsets(&stages, 3, 2, 4).unwrap();
        for f in got {
            assert!(is_valid_fused(&f.iter().collect(), &stages));
        }
    }

    #[test]
    fn fused_sets_match_power_set_filter() {
        let u = universe(12);
        let stages: Vec<Vec<Label>> = u.chunks(4).map(<[Label]>::to_vec).collect();
        // Enumerate P(union) minus the power sets of each stage, restricted
        // to size 6 and to sets touching every stage.
        let mut valid: BTreeSet<Vec<Label>> = BTreeSet::new();
        for mask in 0u32..(1 << 12) {
            if mask.count_ones() != 6 {
                continue;
            }
            let pick: Vec<Label> = (0..12).filter(|i| mask & (1 << i) != 0).map(|i| u[i].clone()).collect();
            let in_one = stages.iter().any(|s| pick.iter().all(|l| s.contains(l)));
            let touches = stages.iter().all(|s| s.iter().any(|l| pick.contains(l)));
            if !in_one && touches {
                valid.insert(pick);
            }
        }
        let got = build_fused_labelsets(&stages, 10, 6, 2).unwrap();
        assert_eq!(got.len(), 10);
        for f in &got {
            assert!(valid.contains(f), "{f:?} not in power-set filter");
        }
    }

    #[test]
    fn fused_infeasible_when_too_small() {
        let stages = vec![labels(&["a"]), labels(&["b"])];
        assert!(matches!(build_fused_labelsets(&stages, 1, 1, 0), Err(Error::InfeasibleFused(_))));
    }

    #[test]
    fn projection_rules() {
        let e = Example::new("x", "sports", TaskKind::SingleClass);
        assert!(project_example(&e, &labels(&["sports", "politics"])).is_some());
        assert!(project_example(&e, &labels(&["politics"])).is_none());

        let ner = Example::new("A went to B", "A ! person ; B ! event ;", TaskKind::SequenceLabel);
        let p = project_example(&ner, &labels(&["person"])).unwrap();
        assert_eq!(p.target, "A ! person ;");
        assert_eq!(p.input, ner.input);
        let reparsed = parse_clauses(&p.target).unwrap();
        assert_eq!(reparsed.len(), 1);
        assert_eq!(reparsed[0].label.as_str(), "person");
        let none = project_example(&ner, &labels(&["org"])).unwrap();
        assert_eq!(none.target, "none");
    }
}
