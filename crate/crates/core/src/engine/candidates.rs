use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{
    AgentKind, ConfigError, Constraint, EngineConfig, HyperparamSchema, ParamDomain, ParamValue,
    PipelineCandidate, SearchStrategy,
};

/// A schema parameter after applying config constraints.
#[derive(Debug, Clone)]
struct EffectiveParam {
    name: String,
    domain: ParamDomain,
    default: ParamValue,
}

fn effective_space(
    kind: AgentKind,
    schema: &HyperparamSchema,
    config: &EngineConfig,
) -> Result<Vec<EffectiveParam>, ConfigError> {
    let constraints = config.constraints.get(&kind);
    let mut out = Vec::with_capacity(schema.params.len());
    for p in &schema.params {
        let domain = match constraints.and_then(|c| c.get(&p.name)) {
            None => p.domain.clone(),
            Some(Constraint::Values { values }) => ParamDomain::Discrete {
                values: values.clone(),
            },
            Some(Constraint::Range { lo, hi }) => match p.domain {
                ParamDomain::Integer { .. } => ParamDomain::Integer {
                    lo: lo.ceil() as i64,
                    hi: hi.floor() as i64,
                },
                _ => ParamDomain::Continuous { lo: *lo, hi: *hi },
            },
        };
        if domain.is_empty() {
            return Err(ConfigError::EmptySearchSpace(format!(
                "`{kind}.{}` has no admissible values",
                p.name
            )));
        }
        let default = if domain.contains(&p.default) {
            p.default.clone()
        } else {
            match &domain {
                ParamDomain::Discrete { values } => values[0].clone(),
                ParamDomain::Continuous { lo, hi } => {
                    ParamValue::Float(p.default.as_f64().unwrap_or(*lo).clamp(*lo, *hi))
                }
                ParamDomain::Integer { lo, hi } => {
                    let d = p.default.as_f64().unwrap_or(*lo as f64).round() as i64;
                    ParamValue::Int(d.clamp(*lo, *hi))
                }
            }
        };
        out.push(EffectiveParam {
            name: p.name.clone(),
            domain,
            default,
        });
    }
    Ok(out)
}

fn sample(param: &EffectiveParam, rng: &mut ChaCha8Rng) -> ParamValue {
    match &param.domain {
        ParamDomain::Discrete { values } => values[rng.gen_range(0..values.len())].clone(),
        ParamDomain::Continuous { lo, hi } => {
            if lo == hi {
                ParamValue::Float(*lo)
            } else {
                ParamValue::Float(rng.gen_range(*lo..=*hi))
            }
        }
        ParamDomain::Integer { lo, hi } => ParamValue::Int(rng.gen_range(*lo..=*hi)),
    }
}

/// Non-default grid levels of one parameter.
fn alternatives(param: &EffectiveParam) -> Vec<ParamValue> {
    let mut out: Vec<ParamValue> = match &param.domain {
        ParamDomain::Discrete { values } => values.clone(),
        ParamDomain::Continuous { lo, hi } => vec![
            ParamValue::Float(*lo),
            ParamValue::Float(lo + (hi - lo) / 2.0),
            ParamValue::Float(*hi),
        ],
        ParamDomain::Integer { lo, hi } => vec![
            ParamValue::Int(*lo),
            ParamValue::Int(lo + (hi - lo) / 2),
            ParamValue::Int(*hi),
        ],
    };
    let mut seen: Vec<ParamValue> = vec![param.default.clone()];
    out.retain(|v| {
        if seen.contains(v) {
            false
        } else {
            seen.push(v.clone());
            true
        }
    });
    out
}

fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            cur.push(i);
            rec(i + 1, n, k, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(0, n, k, &mut Vec::new(), &mut out);
    out
}

/// Grid points of one agent ordered by number of deviating parameters,
/// each tagged with that count. Stops once `limit` points exist.
fn discrepancy_points(space: &[EffectiveParam], limit: usize) -> Vec<(usize, BTreeMap<String, ParamValue>)> {
    let defaults: BTreeMap<String, ParamValue> =
        space.iter().map(|p| (p.name.clone(), p.default.clone())).collect();
    let alts: Vec<Vec<ParamValue>> = space.iter().map(alternatives).collect();
    let mut out = vec![(0, defaults.clone())];
    for d in 1..=space.len() {
        for combo in combinations(space.len(), d) {
            if combo.iter().any(|&i| alts[i].is_empty()) {
                continue;
            }
            // odometer over the chosen parameters' alternatives
            let mut idx = vec![0usize; combo.len()];
            loop {
                if out.len() >= limit {
                    return out;
                }
                let mut point = defaults.clone();
                for (slot, &pi) in combo.iter().enumerate() {
                    point.insert(space[pi].name.clone(), alts[pi][idx[slot]].clone());
                }
                out.push((d, point));
                let mut pos = combo.len();
                loop {
                    if pos == 0 {
                        break;
                    }
                    pos -= 1;
                    idx[pos] += 1;
                    if idx[pos] < alts[combo[pos]].len() {
                        break;
                    }
                    idx[pos] = 0;
                    if pos == 0 {
                        pos = usize::MAX;
                        break;
                    }
                }
                if pos == usize::MAX {
                    break;
                }
            }
        }
    }
    out
}

/// Produces exactly `candidate_budget` unevaluated candidates.
///
/// Agents take turns in canonical order. `random` samples every
/// parameter uniformly from its admissible set; `discrepancy_grid` emits
/// all-default candidates first, then candidates deviating in one
/// parameter, then two, and so on, topping up with random samples once
/// every grid is exhausted.
pub fn enumerate_candidates(
    config: &EngineConfig,
    schemas: &BTreeMap<AgentKind, HyperparamSchema>,
) -> Result<Vec<PipelineCandidate>, ConfigError> {
    config.validate(schemas)?;
    let agents = config.agents();
    let mut spaces = Vec::with_capacity(agents.len());
    for kind in &agents {
        spaces.push(effective_space(*kind, &schemas[kind], config)?);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(super::mix_seed(config.seed, 0xC0FFEE));
    let budget = config.candidate_budget;
    let mut picks: Vec<(AgentKind, BTreeMap<String, ParamValue>)> = Vec::with_capacity(budget);

    if config.search_strategy == SearchStrategy::DiscrepancyGrid {
        let mut tagged: Vec<(usize, usize, usize, BTreeMap<String, ParamValue>)> = Vec::new();
        for (ai, space) in spaces.iter().enumerate() {
            for (order, (d, point)) in discrepancy_points(space, budget).into_iter().enumerate() {
                tagged.push((d, order, ai, point));
            }
        }
        // deviation count first; agents interleave within a level
        tagged.sort_by(|a, b| (a.0, a.1, a.2).cmp(&(b.0, b.1, b.2)));
        picks.extend(tagged.into_iter().take(budget).map(|(_, _, ai, p)| (agents[ai], p)));
    }
    let mut turn = picks.len();
    while picks.len() < budget {
        let ai = turn % agents.len();
        turn += 1;
        let point = spaces[ai]
            .iter()
            .map(|p| (p.name.clone(), sample(p, &mut rng)))
            .collect();
        picks.push((agents[ai], point));
    }
    Ok(picks
        .into_iter()
        .enumerate()
        .map(|(i, (agent, hyperparams))| PipelineCandidate {
            candidate_id: i as u32,
            agent,
            hyperparams,
            rank_score: None,
            train_steps: 0,
        })
        .collect())
}
