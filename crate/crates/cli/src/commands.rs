use ergolab_core::averages::{average_report, exact_limit, vdc_identity_check, FolnerBox};
use ergolab_core::extension::{
    is_pleasant_within, iterate_extensions, one_step_extension, PleasantnessReport, TowerStatus,
    DEFAULT_BUDGET,
};
use ergolab_core::factor::Partition;
use ergolab_core::joining::{
    furstenberg_joining, furstenberg_joining_from, hk_condition_check, host_kra_first_action, host_kra_tower,
    rel_indep_joining, vdc_condition_check, HK_MAX_ACTIONS,
};
use ergolab_core::rational::{self, Q};
use ergolab_core::torus::{character_limit, convergence_constant, is_rational, torus_truncated_average};
use ergolab_core::{FiniteSystem, Observable};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use crate::scenario::{Loaded, Model};
use crate::{CliError, Command, Flags};

pub struct Output {
    pub json: Value,
    pub csv: Option<String>,
}

impl Output {
    fn json(json: Value) -> Self {
        Output { json, csv: None }
    }
}

pub fn dispatch(command: Command, flags: &Flags, loaded: &Loaded) -> Result<Output, CliError> {
    match command {
        Command::Validate => validate(loaded),
        Command::Avg => avg(flags, loaded),
        Command::Limit => limit(loaded),
        Command::Joining => joining(flags, loaded),
        Command::Hk => hk(loaded),
        Command::Extend => extend(flags, loaded),
        Command::Pleasant => pleasant(flags, loaded),
        Command::TorusDemo => torus_demo(flags, loaded),
    }
}

fn q(x: &Q) -> Value {
    Value::String(rational::format(x))
}

fn obs(f: &Observable) -> Value {
    json!(f.to_strings())
}

fn labels(sys: &FiniteSystem, states: &[usize]) -> Vec<String> {
    states.iter().map(|&x| sys.label(x)).collect()
}

fn partition(sys: &FiniteSystem, p: &Partition) -> Value {
    json!(p.cells().iter().map(|c| labels(sys, c)).collect::<Vec<_>>())
}

fn budget(flags: &Flags, loaded: &Loaded) -> usize {
    flags
        .budget
        .or(loaded.scenario.options.budget)
        .unwrap_or(DEFAULT_BUDGET)
}

/// Seeded random base points in `[-10^6, 10^6]^r`.
pub fn base_points(flags: &Flags, loaded: &Loaded, r: usize) -> Vec<Vec<i64>> {
    let trials = &loaded.scenario.base_point_trials;
    let count = flags.trials.unwrap_or(trials.count);
    let mut rng = ChaCha8Rng::seed_from_u64(flags.seed.unwrap_or(trials.seed));
    (0..count)
        .map(|_| (0..r).map(|_| rng.gen_range(-1_000_000..=1_000_000)).collect())
        .collect()
}

fn csv_text(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for row in rows {
        w.write_record(row).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 fields")
}

fn join_ints<T: ToString>(v: &[T]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join(";")
}

fn validate(loaded: &Loaded) -> Result<Output, CliError> {
    let result = match &loaded.model {
        Model::Finite { system, observables } => {
            let orders: Vec<Vec<u64>> = (0..system.d())
                .map(|i| (0..system.r()).map(|j| system.generator(i, j).order()).collect())
                .collect();
            json!({
                "engine": "finite",
                "valid": true,
                "states": system.n(),
                "r": system.r(),
                "d": system.d(),
                "full_support": system.has_full_support(),
                "generator_orders": orders,
                "period_box": system.full_period_box().periods,
                "observables": observables.keys().collect::<Vec<_>>(),
                "tuples": loaded.scenario.tuples,
            })
        }
        Model::Torus { system, observables } => {
            let rotations: Vec<Value> = (0..system.d())
                .flat_map(|i| (0..system.r()).map(move |j| (i, j)))
                .map(|(i, j)| {
                    json!({
                        "action": i + 1,
                        "axis": j + 1,
                        "vector": system.entry(i, j).iter().map(ToString::to_string).collect::<Vec<_>>(),
                        "exact": system.entry(i, j).iter().all(|e| e.is_exact()),
                    })
                })
                .collect();
            json!({
                "engine": "torus",
                "valid": true,
                "m": system.m(),
                "r": system.r(),
                "d": system.d(),
                "rotations": rotations,
                "rational": is_rational(system),
                "observables": observables.keys().collect::<Vec<_>>(),
                "tuples": loaded.scenario.tuples,
            })
        }
    };
    Ok(Output::json(result))
}

fn avg(flags: &Flags, loaded: &Loaded) -> Result<Output, CliError> {
    let (sys, _) = loaded.finite()?;
    let period = sys.full_period_box();
    let mut boxes = loaded.boxes(sys.r())?;
    if boxes.is_empty() {
        boxes.push(FolnerBox::at_origin(period.periods.clone()));
        boxes.push(FolnerBox::at_origin(
            period.periods.iter().map(|p| p + 1).collect(),
        ));
    }
    let trials = base_points(flags, loaded, sys.r());
    let mut results = Vec::new();
    let mut rows = Vec::new();
    for (names, fs) in loaded.finite_tuples()? {
        let limit = exact_limit(sys, &fs)?;
        let mut entries = Vec::new();
        for bx in &boxes {
            let bases = std::iter::once(bx.base.clone()).chain(trials.iter().cloned());
            for base in bases {
                let b = FolnerBox::new(bx.edges.clone(), base)?;
                let rep = average_report(sys, &fs, &b)?;
                let multiple = b.edges.iter().zip(&period.periods).all(|(e, p)| e % p == 0);
                let equals = rep.truncated == rep.limit;
                if multiple && !equals {
                    return Err(CliError::Invariant(format!(
                        "period-multiple box {:?} at {:?} misses the limit",
                        b.edges, b.base
                    )));
                }
                if !rep.within_bound() {
                    return Err(CliError::Invariant(format!(
                        "box {:?} at {:?} exceeds the deviation bound",
                        b.edges, b.base
                    )));
                }
                rows.push(vec![
                    names.join(";"),
                    join_ints(&b.edges),
                    join_ints(&b.base),
                    rational::format(&rep.deviation_sq),
                    rational::format(&rep.bound.squared()),
                    rep.within_bound().to_string(),
                    equals.to_string(),
                ]);
                entries.push(json!({
                    "edges": b.edges,
                    "base": b.base,
                    "truncated": obs(&rep.truncated),
                    "deviation_sq": q(&rep.deviation_sq),
                    "bound_factor": q(&rep.bound.factor),
                    "f1_l2_sq": q(&rep.bound.f1_l2_sq),
                    "bound_sq": q(&rep.bound.squared()),
                    "within_bound": rep.within_bound(),
                    "period_multiple": multiple,
                    "equals_limit": equals,
                }));
            }
        }
        results.push(json!({
            "tuple": names,
            "limit": obs(&limit),
            "boxes": entries,
        }));
    }
    let csv = csv_text(
        &[
            "tuple",
            "edges",
            "base",
            "deviation_sq",
            "bound_sq",
            "within_bound",
            "equals_limit",
        ],
        &rows,
    );
    Ok(Output {
        json: json!({ "period_box": period.periods, "tuples": results }),
        csv: Some(csv),
    })
}

fn limit(loaded: &Loaded) -> Result<Output, CliError> {
    let (sys, _) = loaded.finite()?;
    let mut results = Vec::new();
    let mut rows = Vec::new();
    for (names, fs) in loaded.finite_tuples()? {
        let lim = exact_limit(sys, &fs)?;
        let vdc = vdc_identity_check(sys, &fs)?;
        if !vdc.holds {
            return Err(CliError::Invariant(format!(
                "van der Corput identity fails for {names:?}"
            )));
        }
        for x in 0..sys.n() {
            rows.push(vec![
                names.join(";"),
                x.to_string(),
                sys.label(x),
                rational::format(lim.get(x)),
            ]);
        }
        results.push(json!({
            "tuple": names,
            "limit": obs(&lim),
            "limit_l2_sq": q(&lim.l2_norm_sq(sys)),
            "vdc": {
                "lhs_sq": q(&vdc.lhs_sq),
                "rhs_sq": q(&vdc.rhs_sq),
                "holds": vdc.holds,
            },
        }));
    }
    Ok(Output {
        json: json!({ "period_box": sys.full_period_box().periods, "tuples": results }),
        csv: Some(csv_text(&["tuple", "state", "label", "value"], &rows)),
    })
}

fn first_slots(loaded: &Loaded) -> Result<Vec<(String, Observable)>, CliError> {
    let (_, obs) = loaded.finite()?;
    let mut seen = Vec::new();
    for t in &loaded.scenario.tuples {
        if !seen.iter().any(|(n, _): &(String, Observable)| *n == t[0]) {
            seen.push((t[0].clone(), obs[&t[0]].clone()));
        }
    }
    Ok(seen)
}

fn joining(flags: &Flags, loaded: &Loaded) -> Result<Output, CliError> {
    let (sys, _) = loaded.finite()?;
    let jm = furstenberg_joining(sys);
    let shifts = base_points(flags, loaded, sys.r());
    let shift_ok = shifts
        .iter()
        .all(|b| furstenberg_joining_from(sys, b).mass() == jm.mass());
    let failures = jm.invariance_failures();
    if !jm.marginals_match_base() || !failures.is_empty() || !shift_ok {
        return Err(CliError::Invariant(format!(
            "Furstenberg joining of {} fails its invariants",
            sys.name()
        )));
    }
    let mass: Vec<Value> = jm
        .mass()
        .iter()
        .map(|(t, m)| json!({ "states": labels(sys, t), "mass": q(m) }))
        .collect();
    let mut conditions = Vec::new();
    for (name, f1) in first_slots(loaded)? {
        let c = vdc_condition_check(sys, &f1)?;
        if c.limits_vanish == Some(false) {
            return Err(CliError::Invariant(format!(
                "joining integrals of {name} vanish but a basis limit does not"
            )));
        }
        conditions.push(json!({
            "f1": name,
            "all_integrals_zero": c.holds,
            "limits_vanish": c.limits_vanish,
            "witness": c.witness.map(|w| json!({
                "states": labels(sys, &w.states),
                "cell_size": w.cell.len(),
                "value": q(&w.value),
            })),
        }));
    }
    Ok(Output::json(json!({
        "power": jm.power(),
        "support_size": jm.support_size(),
        "mass": mass,
        "marginals_match": true,
        "invariant_under": jm.actions().iter().map(|a| a.name.clone()).collect::<Vec<_>>(),
        "base_shift_trials": shifts.len(),
        "base_shift_independent": shift_ok,
        "conditions": conditions,
    })))
}

fn action_coords(coords: &[Option<usize>]) -> Vec<String> {
    coords
        .iter()
        .map(|c| match c {
            Some(i) => format!("T_{}", i + 1),
            None => "id".to_string(),
        })
        .collect()
}

fn hk(loaded: &Loaded) -> Result<Output, CliError> {
    let (sys, _) = loaded.finite()?;
    if sys.d() > HK_MAX_ACTIONS {
        return Err(CliError::Budget(format!(
            "Host–Kra tower limited to d ≤ {HK_MAX_ACTIONS}, system has d = {}",
            sys.d()
        )));
    }
    let tower = host_kra_tower(sys)?;
    let product = rel_indep_joining(sys, &Partition::trivial(sys.n()))?;
    let mut stages = Vec::new();
    for (k, jm) in tower.iter().enumerate() {
        let closed = host_kra_first_action(k + 1);
        let failures = jm.invariance_failures();
        if !jm.marginals_match_base() || !failures.is_empty() || jm.actions()[0].coords != closed {
            return Err(CliError::Invariant(format!(
                "Host–Kra stage {} fails its invariants",
                k + 1
            )));
        }
        stages.push(json!({
            "k": k + 1,
            "power": jm.power(),
            "support_size": jm.support_size(),
            "marginals_match": true,
            "first_action": action_coords(&jm.actions()[0].coords),
            "closed_form_match": true,
        }));
    }
    let mut conditions = Vec::new();
    for (name, f1) in first_slots(loaded)? {
        let c = hk_condition_check(sys, &f1)?;
        conditions.push(json!({
            "f1": name,
            "all_integrals_zero": c.holds,
            "limits_vanish": c.limits_vanish,
            "witness": c.witness.map(|(states, v)| json!({
                "states": labels(sys, &states),
                "value": q(&v),
            })),
        }));
    }
    Ok(Output::json(json!({
        "stages": stages,
        "stage1_is_product": tower[0].mass() == product.mass(),
        "conditions": conditions,
    })))
}

fn pleasantness(sys: &FiniteSystem, stage: usize, r: &PleasantnessReport) -> Value {
    json!({
        "stage": stage,
        "states": sys.n(),
        "pleasant": r.pleasant,
        "defect": r.defect_string(),
        "defect_sq": q(&r.defect_sq),
        "defect_approx": format!("{:.12e}", r.defect()),
        "tuples_checked": r.tuples_checked.to_string(),
        "factor_cells": r.factor.num_cells(),
        "constituents": r.constituents.iter().map(|p| partition(sys, p)).collect::<Vec<_>>(),
        "witness": r.witness.as_ref().map(|w| json!({
            "f1": format!("1_{{{}}} - E[1_{{{}}} | factor]", sys.label(w.x1), sys.label(w.x1)),
            "x1": sys.label(w.x1),
            "others": labels(sys, &w.others),
            "limit": obs(&w.limit),
        })),
    })
}

fn status(s: TowerStatus) -> (String, Option<usize>) {
    match s {
        TowerStatus::PleasantAt(m) => (format!("pleasant at stage {m}"), Some(m)),
        TowerStatus::BudgetExceeded { stage } => (format!("budget exceeded at stage {stage}"), None),
        TowerStatus::MaxReached => ("max_m reached without pleasantness".to_string(), None),
    }
}

fn extend(flags: &Flags, loaded: &Loaded) -> Result<Output, CliError> {
    let (sys, _) = loaded.finite()?;
    let max_m = flags.max_m.or(loaded.scenario.options.max_m).unwrap_or(3);
    let tower = iterate_extensions(sys, max_m, budget(flags, loaded))?;
    let stages: Vec<Value> = tower
        .stages
        .iter()
        .map(|s| {
            json!({
                "index": s.index,
                "states": s.system.n(),
                "weights": s.system.weights().iter().map(rational::format).collect::<Vec<_>>(),
                "labels": labels(&s.system, &(0..s.system.n()).collect::<Vec<_>>()),
                "factor_map": s.factor_map,
            })
        })
        .collect();
    let (text, at) = status(tower.status);
    let last_decided = match tower.status {
        TowerStatus::BudgetExceeded { .. } if !tower.stages.is_empty() => tower.stages.len() - 1,
        _ => tower.stages.len(),
    };
    let top = if last_decided == 0 {
        sys
    } else {
        &tower.stages[last_decided - 1].system
    };
    Ok(Output::json(json!({
        "max_m": max_m,
        "status": text,
        "pleasant_at": at,
        "stabilized": tower.stabilized(),
        "stages": stages,
        "report": pleasantness(top, last_decided, &tower.report),
    })))
}

fn pleasant(flags: &Flags, loaded: &Loaded) -> Result<Output, CliError> {
    let (sys, _) = loaded.finite()?;
    let steps = flags.max_m.unwrap_or(0);
    let budget = budget(flags, loaded);
    let mut current = sys.clone();
    for m in 1..=steps {
        let bound = current.n() as u128 * u128::from(current.full_period_box().volume());
        if bound > budget as u128 {
            return Err(CliError::Budget(format!(
                "extension stage {m} may reach {bound} states (budget {budget})"
            )));
        }
        let stage = one_step_extension(&current);
        stage.check_against(&current)?;
        current = stage.system;
    }
    let report = is_pleasant_within(&current, budget)?;
    Ok(Output::json(pleasantness(&current, steps, &report)))
}

fn torus_demo(flags: &Flags, loaded: &Loaded) -> Result<Output, CliError> {
    let (sys, _) = loaded.torus()?;
    let edges = loaded
        .scenario
        .options
        .demo_edges
        .clone()
        .unwrap_or_else(|| (1..=64).collect());
    let mut bases = vec![vec![0; sys.r()]];
    bases.extend(base_points(flags, loaded, sys.r()));
    let samples = if loaded.scenario.samples.is_empty() {
        vec![vec![0.0; sys.m()], vec![0.25; sys.m()], vec![0.5; sys.m()]]
    } else {
        loaded.scenario.samples.clone()
    };
    let mut rows = Vec::new();
    let mut results = Vec::new();
    for (names, fs) in loaded.torus_tuples()? {
        let lim = character_limit(sys, &fs)?;
        let c = convergence_constant(sys, &fs)?;
        let expected: Vec<_> = samples.iter().map(|t| lim.eval(t)).collect();
        let mut max_err: f64 = 0.0;
        for &n in &edges {
            for base in &bases {
                let bx = FolnerBox::new(vec![n; sys.r()], base.clone())?;
                let avg = torus_truncated_average(sys, &fs, &bx, &samples)?;
                for ((z, e), t) in avg.iter().zip(&expected).zip(&samples) {
                    let err = (z - e).norm();
                    max_err = max_err.max(err);
                    rows.push(vec![
                        names.join(";"),
                        n.to_string(),
                        join_ints(base),
                        t.iter().map(|v| format!("{v}")).collect::<Vec<_>>().join(";"),
                        format!("{err:.6e}"),
                    ]);
                }
            }
        }
        results.push(json!({
            "tuple": names,
            "limit": lim.terms().iter().map(|(k, z)| json!({
                "freq": k,
                "re": format!("{:.17e}", z.re),
                "im": format!("{:.17e}", z.im),
            })).collect::<Vec<_>>(),
            "rate_constant": format!("{c:.6e}"),
            "max_abs_error": format!("{max_err:.6e}"),
        }));
    }
    Ok(Output {
        json: json!({
            "edges": edges,
            "bases": bases,
            "samples": samples,
            "tuples": results,
        }),
        csv: Some(csv_text(&["tuple", "N", "base", "sample", "abs_error"], &rows)),
    })
}
