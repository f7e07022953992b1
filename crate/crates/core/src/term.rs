//! Herbrand terms, conjunctions of term equations and their solved forms.
//!
//! The constraint solver is plain syntactic unification with the occurs
//! check. Solved forms are kept idempotent and fully applied, and when two
//! unbound variables are equated the greater one (see [`Var`]'s ordering) is
//! bound to the smaller one, so every equivalence class of variables is
//! represented by its least member. Equal inputs therefore always give the
//! same solved form.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

/// A logic variable.
///
/// `idx` is the renaming generation: variables written in source text have
/// `idx == 0`, and each resolution step renames the clause it uses to a new
/// generation. Variables order by generation first, so fresh variables get
/// bound to older ones.
#[derive(Clone, PartialEq, Eq, Hash, Debug)]
pub struct Var {
    pub name: String,
    pub idx: u32,
}

impl Var {
    pub fn new(name: impl Into<String>) -> Var {
        Var {
            name: name.into(),
            idx: 0,
        }
    }

    pub fn with_idx(name: impl Into<String>, idx: u32) -> Var {
        Var {
            name: name.into(),
            idx,
        }
    }
}

impl Ord for Var {
    fn cmp(&self, other: &Self) -> Ordering {
        self.idx
            .cmp(&other.idx)
            .then_with(|| self.name.cmp(&other.name))
    }
}

impl PartialOrd for Var {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for Var {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.idx == 0 {
            write!(f, "{}", self.name)
        } else {
            write!(f, "{}_{}", self.name, self.idx)
        }
    }
}

#[derive(Clone, PartialEq, Eq, Hash, Debug, PartialOrd, Ord)]
pub enum Term {
    Var(Var),
    /// Functor application; constants have no arguments.
    App(String, Vec<Term>),
}

impl Term {
    pub fn var(name: &str) -> Term {
        Term::Var(Var::new(name))
    }

    pub fn constant(name: &str) -> Term {
        Term::App(name.to_string(), Vec::new())
    }

    pub fn app(name: &str, args: Vec<Term>) -> Term {
        Term::App(name.to_string(), args)
    }

    pub fn is_ground(&self) -> bool {
        match self {
            Term::Var(_) => false,
            Term::App(_, args) => args.iter().all(Term::is_ground),
        }
    }

    pub fn occurs(&self, v: &Var) -> bool {
        match self {
            Term::Var(w) => w == v,
            Term::App(_, args) => args.iter().any(|a| a.occurs(v)),
        }
    }

    pub fn collect_vars(&self, out: &mut BTreeSet<Var>) {
        match self {
            Term::Var(v) => {
                out.insert(v.clone());
            }
            Term::App(_, args) => args.iter().for_each(|a| a.collect_vars(out)),
        }
    }

    /// Variables in order of first occurrence (left to right).
    pub fn vars_in_order(&self, out: &mut Vec<Var>) {
        match self {
            Term::Var(v) => {
                if !out.contains(v) {
                    out.push(v.clone());
                }
            }
            Term::App(_, args) => args.iter().for_each(|a| a.vars_in_order(out)),
        }
    }

    pub fn rename(&self, f: &mut impl FnMut(&Var) -> Var) -> Term {
        match self {
            Term::Var(v) => Term::Var(f(v)),
            Term::App(name, args) => Term::App(name.clone(), args.iter().map(|a| a.rename(f)).collect()),
        }
    }

    fn substitute(&self, v: &Var, t: &Term) -> Term {
        match self {
            Term::Var(w) if w == v => t.clone(),
            Term::Var(_) => self.clone(),
            Term::App(name, args) => Term::App(name.clone(), args.iter().map(|a| a.substitute(v, t)).collect()),
        }
    }

    /// Argument at a 1-based path, descending through compound terms.
    pub fn at_path(&self, path: &[usize]) -> Option<&Term> {
        match path.split_first() {
            None => Some(self),
            Some((&i, rest)) => match self {
                Term::App(_, args) if i >= 1 && i <= args.len() => args[i - 1].at_path(rest),
                _ => None,
            },
        }
    }

    /// Erases variable names; two terms are variants only if their skeletons agree.
    pub fn skeleton(&self) -> String {
        match self {
            Term::Var(_) => "_".to_string(),
            Term::App(name, args) if args.is_empty() => name.clone(),
            Term::App(name, args) => {
                let inner: Vec<String> = args.iter().map(Term::skeleton).collect();
                format!("{}({})", name, inner.join(","))
            }
        }
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Term::Var(v) => write!(f, "{v}"),
            Term::App(name, args) => {
                write!(f, "{name}")?;
                if !args.is_empty() {
                    write!(f, "(")?;
                    for (i, a) in args.iter().enumerate() {
                        if i > 0 {
                            write!(f, ",")?;
                        }
                        write!(f, "{a}")?;
                    }
                    write!(f, ")")?;
                }
                Ok(())
            }
        }
    }
}

/// A conjunction of term equations. The empty conjunction is `true`.
#[derive(Clone, PartialEq, Eq, Hash, Debug, Default)]
pub struct Constraint {
    pub equations: Vec<(Term, Term)>,
}

impl Constraint {
    pub fn new(equations: Vec<(Term, Term)>) -> Constraint {
        Constraint { equations }
    }

    pub fn and(&self, other: &Constraint) -> Constraint {
        let mut equations = self.equations.clone();
        equations.extend(other.equations.iter().cloned());
        Constraint { equations }
    }

    pub fn vars(&self) -> BTreeSet<Var> {
        let mut out = BTreeSet::new();
        for (l, r) in &self.equations {
            l.collect_vars(&mut out);
            r.collect_vars(&mut out);
        }
        out
    }

    pub fn rename(&self, f: &mut impl FnMut(&Var) -> Var) -> Constraint {
        Constraint {
            equations: self.equations.iter().map(|(l, r)| (l.rename(f), r.rename(f))).collect(),
        }
    }
}

impl fmt::Display for Constraint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.equations.is_empty() {
            return write!(f, "true");
        }
        for (i, (l, r)) in self.equations.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{l} = {r}")?;
        }
        Ok(())
    }
}

/// Idempotent most general unifier: no bound variable occurs in any
/// right-hand side.
#[derive(Clone, PartialEq, Eq, Hash, Debug, Default)]
pub struct SolvedForm {
    bindings: BTreeMap<Var, Term>,
}

impl SolvedForm {
    pub fn empty() -> SolvedForm {
        SolvedForm::default()
    }

    pub fn is_empty(&self) -> bool {
        self.bindings.is_empty()
    }

    pub fn len(&self) -> usize {
        self.bindings.len()
    }

    pub fn get(&self, v: &Var) -> Option<&Term> {
        self.bindings.get(v)
    }

    pub fn bindings(&self) -> impl Iterator<Item = (&Var, &Term)> {
        self.bindings.iter()
    }

    pub fn apply(&self, t: &Term) -> Term {
        match t {
            Term::Var(v) => match self.bindings.get(v) {
                Some(b) => b.clone(),
                None => t.clone(),
            },
            Term::App(name, args) => Term::App(name.clone(), args.iter().map(|a| self.apply(a)).collect()),
        }
    }

    pub fn apply_var(&self, v: &Var) -> Term {
        self.bindings.get(v).cloned().unwrap_or_else(|| Term::Var(v.clone()))
    }

    /// Conjoins further equations; `None` when the result is unsatisfiable.
    pub fn extend<'a, I>(&self, equations: I) -> Option<SolvedForm>
    where
        I: IntoIterator<Item = (&'a Term, &'a Term)>,
    {
        let mut sigma = self.clone();
        let mut stack: Vec<(Term, Term)> = equations.into_iter().map(|(l, r)| (l.clone(), r.clone())).collect();
        stack.reverse();
        while let Some((l, r)) = stack.pop() {
            let l = sigma.apply(&l);
            let r = sigma.apply(&r);
            match (l, r) {
                (Term::Var(a), Term::Var(b)) => {
                    if a != b {
                        let (hi, lo) = if a > b { (a, b) } else { (b, a) };
                        sigma.bind(hi, Term::Var(lo));
                    }
                }
                (Term::Var(a), t) | (t, Term::Var(a)) => {
                    if t.occurs(&a) {
                        return None;
                    }
                    sigma.bind(a, t);
                }
                (Term::App(f, xs), Term::App(g, ys)) => {
                    if f != g || xs.len() != ys.len() {
                        return None;
                    }
                    for pair in xs.into_iter().zip(ys).rev() {
                        stack.push(pair);
                    }
                }
            }
        }
        Some(sigma)
    }

    pub fn conjoin(&self, constraint: &Constraint) -> Option<SolvedForm> {
        self.extend(constraint.equations.iter().map(|(l, r)| (l, r)))
    }

    fn bind(&mut self, v: Var, t: Term) {
        for val in self.bindings.values_mut() {
            if val.occurs(&v) {
                *val = val.substitute(&v, &t);
            }
        }
        self.bindings.insert(v, t);
    }

    /// Bindings of the given variables only (existential projection).
    pub fn restrict<'a>(&self, vars: impl IntoIterator<Item = &'a Var>) -> SolvedForm {
        let mut bindings = BTreeMap::new();
        for v in vars {
            if let Some(t) = self.bindings.get(v) {
                bindings.insert(v.clone(), t.clone());
            }
        }
        SolvedForm { bindings }
    }

    pub fn to_constraint(&self) -> Constraint {
        Constraint {
            equations: self.bindings.iter().map(|(v, t)| (Term::Var(v.clone()), t.clone())).collect(),
        }
    }
}

impl fmt::Display for SolvedForm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{")?;
        for (i, (v, t)) in self.bindings.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{v} = {t}")?;
        }
        write!(f, "}}")
    }
}

/// The constraint solver: a most general idempotent unifier, or `None` when
/// the conjunction has no solution in the Herbrand universe.
pub fn solve(constraint: &Constraint) -> Option<SolvedForm> {
    SolvedForm::empty().conjoin(constraint)
}
