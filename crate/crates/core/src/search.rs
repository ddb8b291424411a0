//! Second-stage sub-model search over a trained supernet.
//!
//! Candidates are scored by inherited-weight accuracy on the evaluation set
//! (or its first `eval_subset_size` samples). Scores are cached per path, so
//! revisiting a candidate costs nothing and never changes its score.

use std::collections::HashMap;
use std::str::FromStr;

use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::Batch;
use crate::ranking::evaluate_on_batch;
use crate::sampling::text_enum;
use crate::space::{CellSpec, Path, DEFAULT_ENUMERATION_CAP};
use crate::supernet::Supernet;

text_enum!(Strategy { Random => "random", Evolution => "evolution" });

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    pub strategy: Strategy,
    pub rounds: usize,
    /// Candidates per round (random) or survivors per generation (evolution).
    pub population: usize,
    pub n_mutate: usize,
    pub n_crossover: usize,
    pub mutation_rate: f64,
    /// Upper bound on a sub-model's parameter count, stem and classifier included.
    pub param_budget: Option<usize>,
    pub eval_subset_size: Option<usize>,
    /// Parents are drawn uniformly from the best `n_parents` members.
    pub n_parents: usize,
    /// Attempts per child before giving up on the budget.
    pub max_retries: usize,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            strategy: Strategy::Evolution,
            rounds: 20,
            population: 50,
            n_mutate: 25,
            n_crossover: 25,
            mutation_rate: 0.1,
            param_budget: None,
            eval_subset_size: None,
            n_parents: 10,
            max_retries: 100,
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rounds == 0 {
            return Err(Error::config("search.rounds must be at least 1"));
        }
        if self.population == 0 {
            return Err(Error::config("search.population must be at least 1"));
        }
        if self.strategy == Strategy::Evolution {
            if self.population < 2 {
                return Err(Error::config("evolution needs search.population >= 2"));
            }
            if self.n_mutate + self.n_crossover > self.population {
                return Err(Error::config(
                    "search.n_mutate + search.n_crossover must not exceed search.population",
                ));
            }
            if self.n_parents == 0 {
                return Err(Error::config("search.n_parents must be at least 1"));
            }
        }
        if !(0.0..=1.0).contains(&self.mutation_rate) {
            return Err(Error::config("search.mutation_rate must lie in [0, 1]"));
        }
        if self.max_retries == 0 {
            return Err(Error::config("search.max_retries must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchResult {
    pub best: Path,
    pub score: f64,
    /// Best score seen after each round.
    pub history: Vec<f64>,
    /// Distinct paths scored.
    pub evaluated: usize,
}

struct Scorer<'a> {
    net: &'a Supernet,
    batch: Batch,
    cache: HashMap<Path, f64>,
    best: Option<(Path, f64)>,
}

impl<'a> Scorer<'a> {
    fn new(net: &'a Supernet, eval: &Dataset, subset: Option<usize>) -> Result<Self> {
        let n = subset.unwrap_or(eval.len()).min(eval.len());
        if n == 0 {
            return Err(Error::config("search needs at least one evaluation sample"));
        }
        Ok(Scorer {
            net,
            batch: eval.head(n).full_batch(),
            cache: HashMap::new(),
            best: None,
        })
    }

    /// Scores in input order; the running best keeps the earliest of equal scores.
    fn score(&mut self, paths: &[Path]) -> Result<Vec<f64>> {
        let mut fresh: Vec<Path> = paths
            .iter()
            .filter(|p| !self.cache.contains_key(*p))
            .cloned()
            .collect();
        fresh.sort();
        fresh.dedup();
        let scores = evaluate_on_batch(self.net, &fresh, &self.batch)?;
        self.cache.extend(fresh.into_iter().zip(scores));
        let out: Vec<f64> = paths.iter().map(|p| self.cache[p]).collect();
        for (p, &s) in paths.iter().zip(&out) {
            if self.best.as_ref().is_none_or(|(_, b)| s > *b) {
                self.best = Some((p.clone(), s));
            }
        }
        Ok(out)
    }

    fn best_score(&self) -> f64 {
        self.best.as_ref().map_or(f64::NAN, |(_, s)| *s)
    }

    fn finish(self, history: Vec<f64>) -> Result<SearchResult> {
        let evaluated = self.cache.len();
        let (best, score) = self
            .best
            .ok_or_else(|| Error::Search("no candidate was evaluated".into()))?;
        Ok(SearchResult {
            best,
            score,
            history,
            evaluated,
        })
    }
}

fn within_budget(spec: &CellSpec, path: &Path, budget: Option<usize>) -> bool {
    budget.is_none_or(|b| spec.path_param_count(path) <= b)
}

/// The budget-feasible paths when the space is small enough to list.
fn feasible_set(spec: &CellSpec, budget: Option<usize>) -> Option<Vec<Path>> {
    let all = spec.enumerate_paths(DEFAULT_ENUMERATION_CAP).ok()?;
    Some(
        all.into_iter()
            .filter(|p| within_budget(spec, p, budget))
            .collect(),
    )
}

/// Draws a budget-feasible path, uniformly over the feasible set.
fn draw_feasible<R: Rng + ?Sized>(
    spec: &CellSpec,
    cfg: &SearchConfig,
    feasible: Option<&[Path]>,
    rng: &mut R,
) -> Result<Path> {
    if let Some(set) = feasible {
        return set
            .choose(rng)
            .cloned()
            .ok_or_else(|| Error::Search("the parameter budget excludes every candidate".into()));
    }
    for _ in 0..cfg.max_retries {
        let p = spec.random_path(rng);
        if within_budget(spec, &p, cfg.param_budget) {
            return Ok(p);
        }
    }
    Err(Error::Search(format!(
        "no candidate within the parameter budget after {} draws",
        cfg.max_retries
    )))
}

fn budget_feasible_set(spec: &CellSpec, cfg: &SearchConfig) -> Result<Option<Vec<Path>>> {
    let set = feasible_set(spec, cfg.param_budget);
    if set.as_ref().is_some_and(Vec::is_empty) {
        return Err(Error::Search(
            "the parameter budget excludes every candidate".into(),
        ));
    }
    Ok(set)
}

/// `rounds` rounds of `population` uniformly drawn feasible candidates.
pub fn random_search<R: Rng + ?Sized>(
    net: &Supernet,
    cfg: &SearchConfig,
    eval: &Dataset,
    rng: &mut R,
) -> Result<SearchResult> {
    cfg.validate()?;
    let spec = net.spec();
    let feasible = budget_feasible_set(spec, cfg)?;
    let mut scorer = Scorer::new(net, eval, cfg.eval_subset_size)?;
    let mut history = Vec::with_capacity(cfg.rounds);
    for _ in 0..cfg.rounds {
        let round = (0..cfg.population)
            .map(|_| draw_feasible(spec, cfg, feasible.as_deref(), rng))
            .collect::<Result<Vec<_>>>()?;
        scorer.score(&round)?;
        history.push(scorer.best_score());
    }
    scorer.finish(history)
}

/// Elitist evolution from a random (or, if it fits, exhaustive) start.
pub fn evolutionary_search<R: Rng + ?Sized>(
    net: &Supernet,
    cfg: &SearchConfig,
    eval: &Dataset,
    rng: &mut R,
) -> Result<SearchResult> {
    cfg.validate()?;
    let spec = net.spec();
    let feasible = budget_feasible_set(spec, cfg)?;
    let initial = match &feasible {
        Some(set) if set.len() <= cfg.population => set.clone(),
        _ => (0..cfg.population)
            .map(|_| draw_feasible(spec, cfg, feasible.as_deref(), rng))
            .collect::<Result<Vec<_>>>()?,
    };
    evolutionary_search_from(net, cfg, eval, initial, rng)
}

/// Evolution from a given initial population.
///
/// Each generation draws `n_mutate` mutants and `n_crossover` children from
/// the best `n_parents` members, then keeps the best `population` distinct
/// paths of parents and children together (ties favour incumbents).
pub fn evolutionary_search_from<R: Rng + ?Sized>(
    net: &Supernet,
    cfg: &SearchConfig,
    eval: &Dataset,
    initial: Vec<Path>,
    rng: &mut R,
) -> Result<SearchResult> {
    cfg.validate()?;
    let spec = net.spec();
    if initial.is_empty() {
        return Err(Error::Search("empty initial population".into()));
    }
    for p in &initial {
        spec.validate_path(p)?;
        if !within_budget(spec, p, cfg.param_budget) {
            return Err(Error::Search(format!(
                "initial member {p} exceeds the parameter budget"
            )));
        }
    }
    let mut scorer = Scorer::new(net, eval, cfg.eval_subset_size)?;
    let scores = scorer.score(&initial)?;
    let mut population = survivors(initial.into_iter().zip(scores).collect(), cfg.population);
    let mut history = Vec::with_capacity(cfg.rounds);

    for _ in 0..cfg.rounds {
        let parents: Vec<&Path> = population
            .iter()
            .take(cfg.n_parents)
            .map(|(p, _)| p)
            .collect();
        let mut children = Vec::with_capacity(cfg.n_mutate + cfg.n_crossover);
        for _ in 0..cfg.n_mutate {
            children.push(retry(
                cfg,
                "mutation",
                || {
                    let parent = parents.choose(rng).expect("nonempty population");
                    Ok(spec.mutate(parent, cfg.mutation_rate, rng))
                },
                spec,
            )?);
        }
        for _ in 0..cfg.n_crossover {
            children.push(retry(
                cfg,
                "crossover",
                || {
                    let a = parents.choose(rng).expect("nonempty population");
                    let b = parents.choose(rng).expect("nonempty population");
                    spec.crossover(a, b, rng)
                },
                spec,
            )?);
        }
        let scores = scorer.score(&children)?;
        let mut pool = population;
        pool.extend(children.into_iter().zip(scores));
        population = survivors(pool, cfg.population);
        history.push(scorer.best_score());
    }
    scorer.finish(history)
}

fn retry(
    cfg: &SearchConfig,
    what: &str,
    mut make: impl FnMut() -> Result<Path>,
    spec: &CellSpec,
) -> Result<Path> {
    for _ in 0..cfg.max_retries {
        let child = make()?;
        if within_budget(spec, &child, cfg.param_budget) {
            return Ok(child);
        }
    }
    Err(Error::Search(format!(
        "{what} produced no candidate within the parameter budget after {} tries",
        cfg.max_retries
    )))
}

/// Best `keep` distinct paths, stable with respect to pool order.
fn survivors(pool: Vec<(Path, f64)>, keep: usize) -> Vec<(Path, f64)> {
    let mut seen = std::collections::HashSet::new();
    let mut distinct: Vec<(Path, f64)> = pool
        .into_iter()
        .filter(|(p, _)| seen.insert(p.clone()))
        .collect();
    distinct.sort_by(|a, b| b.1.total_cmp(&a.1));
    distinct.truncate(keep);
    distinct
}

/// Dispatches on `cfg.strategy`.
pub fn search<R: Rng + ?Sized>(
    net: &Supernet,
    cfg: &SearchConfig,
    eval: &Dataset,
    rng: &mut R,
) -> Result<SearchResult> {
    match cfg.strategy {
        Strategy::Random => random_search(net, cfg, eval, rng),
        Strategy::Evolution => evolutionary_search(net, cfg, eval, rng),
    }
}
