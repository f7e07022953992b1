//! Random small programs, corpora and patterns for property tests.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::clp::{ClauseId, Corpus, Program};
use crate::loglinear::{bound_at, Model, Pattern, Property, Space};
use crate::scf::ChoiceParams;

const CONSTANTS: [&str; 3] = ["a", "b", "c"];

/// Program text with 1 to 3 predicates and at most `max_clauses` clauses.
/// Every predicate has a clause; bodies have at most two atoms.
pub fn program(rng: &mut impl Rng, max_clauses: usize) -> String {
    let npred = rng.gen_range(1..=3usize).min(max_clauses.max(1));
    let arity: Vec<usize> = (0..npred).map(|_| rng.gen_range(1..=2)).collect();
    let mut per = vec![1usize; npred];
    let extra = max_clauses.saturating_sub(npred);
    for _ in 0..rng.gen_range(0..=extra) {
        per[rng.gen_range(0..npred)] += 1;
    }
    let mut out = String::new();
    for (p, &n) in per.iter().enumerate() {
        for alt in 0..n {
            let head: Vec<String> = (1..=arity[p]).map(|i| format!("X{i}")).collect();
            let mut pool = head.clone();
            pool.extend(["Y1".to_string(), "Y2".to_string()]);
            let mut lits = Vec::new();
            // the first alternative is a base case
            let max_body = if alt == 0 { 0 } else { 2 };
            for _ in 0..rng.gen_range(0..=max_body) {
                let q = rng.gen_range(0..npred);
                let args: Vec<&str> = (0..arity[q]).map(|_| pool.choose(rng).unwrap().as_str()).collect();
                lits.push(format!("p{}({})", q + 1, args.join(",")));
            }
            for _ in 0..rng.gen_range(0..=2) {
                let lhs = pool.choose(rng).unwrap();
                let rhs = match rng.gen_range(0..4) {
                    0 | 1 => CONSTANTS.choose(rng).unwrap().to_string(),
                    2 => format!("f({})", pool.choose(rng).unwrap()),
                    _ => pool.choose(rng).unwrap().clone(),
                };
                lits.push(format!("{lhs} = {rhs}"));
            }
            let head = format!("p{}({})", p + 1, head.join(","));
            if lits.is_empty() {
                out.push_str(&format!("{head}.\n"));
            } else {
                out.push_str(&format!("{head} :- {}.\n", lits.join(", ")));
            }
        }
    }
    out
}

/// A query on the first predicate with variable or constant arguments.
pub fn query(rng: &mut impl Rng, program: &Program) -> String {
    let pred = &program.preds()[0];
    let args: Vec<String> = (0..pred.arity)
        .map(|i| {
            if rng.gen_bool(0.3) {
                CONSTANTS.choose(rng).unwrap().to_string()
            } else {
                format!("V{i}")
            }
        })
        .collect();
    format!("{}({})", pred.name, args.join(","))
}

/// Corpus text of `n` queries, possibly repeated.
pub fn corpus(rng: &mut impl Rng, program: &Program, n: usize) -> String {
    (0..n).map(|_| query(rng, program) + "\n").collect()
}

/// Up to `k` patterns that share no clause id, each of height at most 2.
pub fn disjoint_patterns(rng: &mut impl Rng, program: &Program, k: usize) -> Vec<Pattern> {
    let mut ids: Vec<ClauseId> = program.clauses().map(|c| c.id).collect();
    ids.shuffle(rng);
    let mut used = BTreeSet::new();
    let mut out = Vec::new();
    for id in ids {
        if out.len() >= k {
            break;
        }
        if used.contains(&id) {
            continue;
        }
        used.insert(id);
        let clause = program.clause(id);
        let mut pat = Pattern::leaf(id);
        if !clause.body.is_empty() && rng.gen_bool(0.5) {
            let slot = rng.gen_range(0..clause.body.len());
            let free: Vec<ClauseId> = program
                .clauses_for(&clause.body[slot].pred)
                .iter()
                .map(|c| c.id)
                .filter(|c| !used.contains(c))
                .collect();
            if let Some(&child) = free.choose(rng) {
                used.insert(child);
                pat.children = vec![None; clause.body.len()];
                pat.children[slot] = Some(Pattern::leaf(child));
            }
        }
        out.push(pat);
    }
    out
}

/// A random program with a corpus whose every query has a proof.
#[derive(Clone, Debug)]
pub struct Instance {
    pub program: Program,
    pub corpus: Corpus,
    pub depth: u32,
    pub space: Space,
}

/// Draws programs until one yields a proof space of 1 to `max_trees` trees.
pub fn instance(rng: &mut impl Rng, max_clauses: usize, max_depth: u32, max_trees: usize) -> Instance {
    loop {
        let Ok(program) = Program::parse(&program(rng, max_clauses)) else {
            continue;
        };
        let depth = rng.gen_range(1..=max_depth);
        let n = rng.gen_range(1..=3);
        let Ok(corpus) = Corpus::parse(&corpus(rng, &program, n)) else {
            continue;
        };
        if let Ok(space) = Space::build(&program, &corpus, depth, max_trees) {
            return Instance {
                program,
                corpus,
                depth,
                space,
            };
        }
    }
}

/// Uniform base plus disjoint patterns and possibly an answer binding, with
/// weights in `[-1, 1]`.
pub fn model(rng: &mut impl Rng, program: &Program, space: &Space) -> Model {
    let mut m = Model::base(ChoiceParams::uniform(program));
    let k = rng.gen_range(0..=2);
    for p in disjoint_patterns(rng, program, k) {
        m.push(Property::Tree(p), rng.gen_range(-1.0..=1.0));
    }
    if let Some(t) = space.trees.choose(rng) {
        if let Some(value) = bound_at(&t.query, t, &[1]).filter(|v| v.is_ground()) {
            m.push(Property::Bind { path: vec![1], value }, rng.gen_range(-1.0..=1.0));
        }
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn generated_text_parses() {
        for seed in 0..200 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let text = program(&mut rng, 8);
            let p = Program::parse(&text).unwrap_or_else(|e| panic!("{text}\n{e}"));
            assert!(p.len() <= 8);
            crate::clp::Corpus::parse(&corpus(&mut rng, &p, 4)).unwrap();
            let pats = disjoint_patterns(&mut rng, &p, 3);
            let mut seen = BTreeSet::new();
            for pat in &pats {
                pat.validate(&p).unwrap();
                for id in pat.clause_ids() {
                    assert!(seen.insert(id));
                }
            }
        }
    }
}
