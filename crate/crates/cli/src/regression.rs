//! Built-in checks on the two-valued agreement program, run by `pclp eval`
//! without a program.

use std::fmt::Write as _;
use std::sync::Arc;

use pclp_core::clp::{enumerate_proofs, Corpus, Program, Query};
use pclp_core::earley::best_proof_subtree_props;
use pclp_core::induction::{gain, im_estimate, im_step, induce, ImOptions, InduceOptions, ScalingMass};
use pclp_core::loglinear::{exact_dist, space_log_lik, tree_ml, Evaluation, Model, Property, Space, DEFAULT_SPACE_LIMIT};
use pclp_core::numeric::fmt_num;
use pclp_core::scf::{erf_reestimate, normalized_tree_dist, ChoiceParams};
use pclp_core::term::Term;

pub const PROGRAM: &str = "\
s(Z) :- p(Z), q(Z).
p(Z) :- Z = a.
p(Z) :- Z = b.
q(Z) :- Z = a.
q(Z) :- Z = b.
";

pub const CORPUS: &str = "2x s(Z), Z = a.\ns(Z), Z = b.\n";

const DEPTH: u32 = 3;

pub struct Check {
    pub name: &'static str,
    pub got: Vec<f64>,
    pub want: Vec<f64>,
    pub tol: f64,
}

impl Check {
    pub fn ok(&self) -> bool {
        self.got.len() == self.want.len() && self.got.iter().zip(&self.want).all(|(g, w)| (g - w).abs() <= self.tol)
    }
}

#[derive(Default)]
pub struct Report {
    pub checks: Vec<Check>,
}

fn list(xs: &[f64]) -> String {
    xs.iter().map(|x| fmt_num(*x)).collect::<Vec<_>>().join(",")
}

impl Report {
    fn add(&mut self, name: &'static str, got: Vec<f64>, want: Vec<f64>, tol: f64) {
        self.checks.push(Check { name, got, want, tol });
    }

    pub fn failures(&self) -> usize {
        self.checks.iter().filter(|c| !c.ok()).count()
    }

    pub fn text(&self) -> String {
        let mut out = String::new();
        for c in &self.checks {
            let status = if c.ok() { "ok" } else { "FAIL" };
            let _ = writeln!(out, "{status}\t{}\t{}\texpected {}", c.name, list(&c.got), list(&c.want));
        }
        out
    }
}

fn bind(v: &str) -> Property {
    Property::Bind {
        path: vec![1],
        value: Term::constant(v),
    }
}

pub fn run() -> Report {
    let program = Program::parse(PROGRAM).expect("built-in program parses");
    let corpus = Corpus::parse(CORPUS).expect("built-in corpus parses");
    let space = Space::build(&program, &corpus, DEPTH, DEFAULT_SPACE_LIMIT).expect("built-in corpus has proofs");
    let uniform = ChoiceParams::uniform(&program);
    let mut r = Report::default();

    let table = erf_reestimate(&uniform, &program, &corpus, DEPTH).expect("reestimation");
    let ids: Vec<_> = program.clauses().map(|c| c.id).collect();
    r.add("expected clause counts", ids.iter().map(|&i| table.expected_of(i)).collect(), vec![3.0, 2.0, 1.0, 2.0, 1.0], 1e-12);
    r.add("denominators", ids.iter().map(|&i| table.denominator_of(i)).collect(), vec![3.0; 5], 1e-12);
    r.add(
        "reestimated parameters",
        ids.iter().map(|&i| table.params.get(i)).collect(),
        vec![1.0, 2.0 / 3.0, 1.0 / 3.0, 2.0 / 3.0, 1.0 / 3.0],
        1e-12,
    );

    let renorm = normalized_tree_dist(&table.params, &space.trees).expect("nonzero");
    r.add("renormalized tree distribution", renorm.clone(), vec![0.8, 0.2], 1e-9);
    let ml = tree_ml(&space, &renorm, 100_000);
    let (l1, l2) = (space_log_lik(&space, &renorm).exp(), space_log_lik(&space, &ml).exp());
    r.add("likelihood after reestimation", vec![l1], vec![0.128], 1e-9);
    r.add("likelihood of tree frequencies", vec![l2], vec![4.0 / 27.0], 1e-9);
    r.add("tree frequencies beat reestimation", vec![f64::from(u8::from(l2 > l1))], vec![1.0], 0.0);

    let mut fitted = Model::base(uniform.clone());
    fitted.push(bind("a"), 2f64.ln());
    let open = Arc::new(Query::parse("s(Z)").expect("query parses"));
    let trees = enumerate_proofs(&program, &open, DEPTH).trees;
    r.add("binding model distribution", exact_dist(&fitted, &trees).mass, vec![2.0 / 3.0, 1.0 / 3.0], 1e-12);
    r.add("binding model likelihood", vec![Evaluation::new(&fitted, &space).log_lik.exp()], vec![4.0 / 27.0], 1e-9);
    let base = Model::base(uniform.clone());
    r.add("uniform model likelihood", vec![Evaluation::new(&base, &space).log_lik.exp()], vec![0.125], 1e-12);

    let mut start = Model::base(uniform.clone());
    start.push(bind("a"), 0.0);
    let step = im_step(&start, &space, ScalingMass::ExcludeRoot).expect("scaling step");
    r.add("first scaling step", vec![step.gamma[1]], vec![(4.0f64 / 3.0).ln()], 1e-8);
    let opts = ImOptions {
        tol: 1e-14,
        max_iters: 200,
        ..ImOptions::default()
    };
    let fit = im_estimate(&start, &space, &opts).expect("estimation");
    r.add("estimated binding weight", vec![fit.model.lambda[1]], vec![2f64.ln()], 1e-6);

    let g = gain(&bind("a"), &base, &space).expect("gain");
    r.add("gain maximizer for the a-binding", vec![g.alpha], vec![(4.0f64 / 3.0).ln()], 1e-8);

    let ind = induce(base, &space, &program, &InduceOptions::default()).expect("induction");
    let last = ind.rounds.last().map_or(f64::NAN, |x| x.log_lik.exp());
    r.add("likelihood after one induction round", vec![last], vec![4.0 / 27.0], 1e-9);

    let best = best_proof_subtree_props(&program, &open, &fitted, DEPTH).expect("best proof");
    let other = trees.iter().find(|t| **t != best.tree).map_or(f64::NAN, |t| fitted.log_weight(t));
    r.add("best proof weight ratio", vec![(best.log_weight - other).exp()], vec![2.0], 1e-9);
    r
}
