//! Parent and survivor selection.
//!
//! Ties are always broken deterministically: tournaments prefer the older
//! individual and then the lexicographically smaller prompt; survivor
//! selection prefers parents over offspring and then the smaller prompt.

use std::cmp::Ordering;

use rand::seq::index;
use rand::Rng;

use super::{EngineError, Population};
use crate::types::Individual;

fn score(ind: &Individual) -> Result<f64, EngineError> {
    ind.mean_score()
        .ok_or_else(|| EngineError::UnevaluatedIndividual(ind.id.clone()))
}

/// `Less` means `a` wins the tournament.
fn tournament_order(a: &Individual, sa: f64, b: &Individual, sb: f64) -> Ordering {
    sb.total_cmp(&sa)
        .then_with(|| a.born_generation.cmp(&b.born_generation))
        .then_with(|| a.text().cmp(b.text()))
        .then_with(|| a.id.cmp(&b.id))
}

/// Draws `tournament_size` distinct individuals uniformly and returns the
/// fittest.
pub fn tournament_select<'p, R: Rng + ?Sized>(
    pop: &'p Population,
    tournament_size: usize,
    rng: &mut R,
) -> Result<&'p Individual, EngineError> {
    let inds = &pop.individuals;
    if inds.len() < 2 || tournament_size == 0 || tournament_size > inds.len() {
        return Err(EngineError::InvalidPopulation(format!(
            "tournament of {tournament_size} over {} individuals",
            inds.len()
        )));
    }
    if let Some(bad) = inds.iter().find(|i| i.fitness.is_none()) {
        return Err(EngineError::UnevaluatedPopulation(bad.id.clone()));
    }
    let mut best: Option<(&Individual, f64)> = None;
    for i in index::sample(rng, inds.len(), tournament_size) {
        let cand = &inds[i];
        let s = score(cand)?;
        best = match best {
            Some((b, bs)) if tournament_order(b, bs, cand, s) != Ordering::Greater => Some((b, bs)),
            _ => Some((cand, s)),
        };
    }
    Ok(best.expect("tournament_size >= 1").0)
}

/// The fitter of two parents under the tournament tie rule.
pub fn fitter<'a>(a: &'a Individual, b: &'a Individual) -> &'a Individual {
    let (sa, sb) = (a.mean_score().unwrap_or(f64::NEG_INFINITY), b.mean_score().unwrap_or(f64::NEG_INFINITY));
    if tournament_order(a, sa, b, sb) == Ordering::Greater {
        b
    } else {
        a
    }
}

/// Keeps the top `n` of parents and offspring by mean score.
pub fn select_survivors(parents: &Population, offspring: &[Individual], n: usize) -> Result<Population, EngineError> {
    let mut pool: Vec<(bool, f64, &Individual)> = Vec::with_capacity(parents.individuals.len() + offspring.len());
    for p in &parents.individuals {
        pool.push((false, score(p)?, p));
    }
    for o in offspring {
        pool.push((true, score(o)?, o));
    }
    if pool.len() < n {
        return Err(EngineError::InvalidPopulation(format!(
            "cannot keep {n} of {} individuals",
            pool.len()
        )));
    }
    pool.sort_by(|a, b| {
        b.1.total_cmp(&a.1)
            .then_with(|| a.0.cmp(&b.0))
            .then_with(|| a.2.text().cmp(b.2.text()))
            .then_with(|| a.2.id.cmp(&b.2.id))
    });
    Ok(Population {
        individuals: pool.into_iter().take(n).map(|(_, _, i)| i.clone()).collect(),
        generation_index: parents.generation_index + 1,
    })
}

/// Index of the best individual: highest mean score, then smallest text.
pub fn best_index(pop: &Population) -> Result<usize, EngineError> {
    let mut best: Option<(usize, f64)> = None;
    for (i, ind) in pop.individuals.iter().enumerate() {
        let s = score(ind)?;
        best = match best {
            Some((b, bs)) => {
                let cur = &pop.individuals[b];
                let order = bs
                    .total_cmp(&s)
                    .reverse()
                    .then_with(|| cur.text().cmp(ind.text()))
                    .then_with(|| cur.id.cmp(&ind.id));
                if order == Ordering::Greater {
                    Some((i, s))
                } else {
                    Some((b, bs))
                }
            }
            None => Some((i, s)),
        };
    }
    best.map(|b| b.0)
        .ok_or_else(|| EngineError::InvalidPopulation("empty population".into()))
}
