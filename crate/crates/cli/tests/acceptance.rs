//! Acceptance gate. Runs every criterion against the bundled corpus and
//! prints one PASS/FAIL line each; exits nonzero if any criterion fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use ergolab_cli::scenario::{load, Engine, Loaded};
use ergolab_core::averages::{average_report, contractive_check, exact_limit, vdc_identity_check, FolnerBox};
use ergolab_core::extension::{
    is_pleasant, one_step_extension, pleasant_constituents, pleasant_factor, reduce_pleasant_limit,
};
use ergolab_core::factor::cond_expect;
use ergolab_core::joining::{
    furstenberg_joining, furstenberg_joining_from, host_kra_tower, vdc_condition_check,
};
use ergolab_core::rational::{q, qi};
use ergolab_core::torus::{torus_truncated_average, TrigObservable};
use ergolab_core::{FiniteSystem, Observable};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        let ok: bool = $cond;
        if !ok {
            return Err(format!($($msg)+));
        }
    };
}

fn root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn corpus() -> Vec<(PathBuf, Loaded)> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(root().join("scenarios"))
        .expect("scenario directory")
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "json"))
        .collect();
    paths.sort();
    paths
        .into_iter()
        .map(|p| {
            let l = load(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
            (p, l)
        })
        .collect()
}

fn finite_corpus() -> Vec<(String, FiniteSystem, Vec<Vec<Observable>>)> {
    corpus()
        .into_iter()
        .filter(|(_, l)| l.scenario.engine == Engine::Finite)
        .map(|(_, l)| {
            let sys = l.finite().unwrap().0.clone();
            let tuples = l.finite_tuples().unwrap().into_iter().map(|(_, t)| t).collect();
            (l.scenario.name.clone(), sys, tuples)
        })
        .collect()
}

fn fuzz_observable(rng: &mut ChaCha8Rng, n: usize) -> Observable {
    Observable::new(
        (0..n)
            .map(|_| q(rng.gen_range(-6..=6), rng.gen_range(1..=4)))
            .collect(),
    )
}

fn fuzz_tuple(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Vec<Observable> {
    (0..d).map(|_| fuzz_observable(rng, n)).collect()
}

fn max_period(sys: &FiniteSystem) -> u64 {
    sys.full_period_box().periods.iter().copied().max().unwrap_or(1)
}

fn fuzz_box(rng: &mut ChaCha8Rng, sys: &FiniteSystem) -> FolnerBox {
    let p = max_period(sys);
    let edges = (0..sys.r()).map(|_| rng.gen_range(1..=2 * p)).collect();
    let base = (0..sys.r())
        .map(|_| rng.gen_range(-1_000_000..=1_000_000))
        .collect();
    FolnerBox::new(edges, base).unwrap()
}

fn within(limit: Duration, start: Instant) -> Result<Duration, String> {
    let t = start.elapsed();
    if t > limit {
        Err(format!("took {t:.2?}, limit {limit:?}"))
    } else {
        Ok(t)
    }
}

fn torus_identity() -> Outcome {
    let start = Instant::now();
    let loaded = load(&root().join("scenarios/torus-golden.json")).map_err(|e| e.to_string())?;
    let (sys, _) = loaded.torus().map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut bases: Vec<i64> = vec![0, 1, -1, 1 << 40, -(1 << 40)];
    bases.extend((0..12).map(|_| rng.gen_range(-1_000_000_000..=1_000_000_000)));
    let mut samples: Vec<Vec<f64>> = loaded.scenario.samples.clone();
    samples.extend((0..8).map(|_| vec![rng.gen::<f64>()]));
    let mut worst = 0.0f64;
    let mut count = 0usize;
    for k in [1i64, -1, 3] {
        let f2 = TrigObservable::character(vec![k]);
        let f1 = f2.conj().mul(&f2.conj());
        let fs = [f1, f2.clone()];
        for n in 1..=64u64 {
            for &b in &bases {
                let bx = FolnerBox::new(vec![n], vec![b]).unwrap();
                let avg = torus_truncated_average(sys, &fs, &bx, &samples).map_err(|e| e.to_string())?;
                for (a, t) in avg.iter().zip(&samples) {
                    worst = worst.max((a - f2.conj().eval(t)).norm());
                    count += 1;
                }
            }
        }
    }
    ensure!(worst <= 1e-12, "max |error| {worst:e} over {count} averages");
    let t = within(Duration::from_secs(1), start)?;
    Ok(format!("{count} averages, max |error| {worst:.1e}, {t:.2?}"))
}

fn cyclic_counterexample() -> Outcome {
    let start = Instant::now();
    let loaded = load(&root().join("scenarios/cyclic-5.json")).map_err(|e| e.to_string())?;
    let sys = loaded.finite().map_err(|e| e.to_string())?.0;
    let base = is_pleasant(sys).map_err(|e| e.to_string())?;
    ensure!(!base.pleasant, "cyclic-5 reported pleasant");
    ensure!(
        base.defect_sq > qi(0),
        "defect {} is not positive",
        base.defect_string()
    );
    let w = base.witness.clone().ok_or("no witness recorded")?;
    let e = Observable::indicator(sys.n(), w.x1);
    let mut fs = vec![e.sub(&cond_expect(sys, &e, &base.factor).unwrap())];
    fs.extend(w.others.iter().map(|&x| Observable::indicator(sys.n(), x)));
    let direct = exact_limit(sys, &fs).unwrap();
    ensure!(direct == w.limit, "witness limit does not reproduce");
    ensure!(
        direct.l2_norm_sq(sys) == base.defect_sq,
        "witness norm differs from defect"
    );

    let ext = one_step_extension(sys);
    ext.check_against(sys).map_err(|e| e.to_string())?;
    let up = &ext.system;
    ensure!(up.n() == 25, "extension has {} states", up.n());
    let top = is_pleasant(up).map_err(|e| e.to_string())?;
    ensure!(
        top.pleasant && top.defect_sq == qi(0),
        "extension defect {}",
        top.defect_string()
    );
    let n = up.n();
    let mut checked = 0;
    for x1 in 0..n {
        let e = Observable::indicator(n, x1);
        let f1 = e.sub(&cond_expect(up, &e, &top.factor).unwrap());
        for x2 in 0..n {
            let lim = exact_limit(up, &[f1.clone(), Observable::indicator(n, x2)]).unwrap();
            ensure!(
                lim.is_zero(),
                "basis limit ({x1},{x2}) is nonzero on the extension"
            );
            checked += 1;
        }
    }
    let t = within(Duration::from_secs(10), start)?;
    Ok(format!(
        "defect {} -> 0, {checked} basis limits on 25 states, {t:.2?}",
        base.defect_string()
    ))
}

fn furstenberg_properties() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let corpus = finite_corpus();
    for (name, sys, _) in &corpus {
        let jm = furstenberg_joining(sys);
        ensure!(
            jm.marginals_match_base(),
            "{name}: marginals differ from the base measure"
        );
        ensure!(jm.total_mass() == qi(1), "{name}: total mass {}", jm.total_mass());
        ensure!(jm.actions().len() == sys.d() + 1, "{name}: expected d+1 actions");
        let bad = jm.invariance_failures();
        ensure!(bad.is_empty(), "{name}: not invariant under {bad:?}");
        for _ in 0..20 {
            let shift: Vec<i64> = (0..sys.r())
                .map(|_| rng.gen_range(-1_000_000..=1_000_000))
                .collect();
            ensure!(
                furstenberg_joining_from(sys, &shift).mass() == jm.mass(),
                "{name}: joining depends on the shift {shift:?}"
            );
        }
    }
    let t = within(Duration::from_secs(30), start)?;
    Ok(format!("{} scenarios x 20 shifts, {t:.2?}", corpus.len()))
}

fn deviation_bounds() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut boxes = 0usize;
    let mut exact_hits = 0usize;
    for (name, sys, tuples) in finite_corpus() {
        let periods = sys.full_period_box().periods;
        let top = 2 * max_period(&sys);
        let limits: Vec<Observable> = tuples.iter().map(|fs| exact_limit(&sys, fs).unwrap()).collect();
        for _ in 0..20 {
            for n in 1..=top {
                let base: Vec<i64> = (0..sys.r())
                    .map(|_| rng.gen_range(-1_000_000..=1_000_000))
                    .collect();
                let bx = FolnerBox::new(vec![n; sys.r()], base).unwrap();
                let multiple = periods.iter().all(|&p| n % p == 0);
                for (fs, lim) in tuples.iter().zip(&limits) {
                    let rep = average_report(&sys, fs, &bx).map_err(|e| e.to_string())?;
                    ensure!(&rep.limit == lim, "{name}: limit changed");
                    ensure!(rep.within_bound(), "{name}: bound violated at N={n}");
                    if multiple {
                        ensure!(&rep.truncated == lim, "{name}: inexact at period multiple N={n}");
                        exact_hits += 1;
                    }
                    boxes += 1;
                }
            }
        }
    }
    ensure!(exact_hits > 0, "no period multiples were visited");
    let t = within(Duration::from_secs(30), start)?;
    Ok(format!(
        "{boxes} box averages, {exact_hits} exact at period multiples, {t:.2?}"
    ))
}

fn contractive_inequality() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut total = 0;
    for (name, sys, _) in finite_corpus() {
        for i in 0..500 {
            let fs = fuzz_tuple(&mut rng, sys.n(), sys.d());
            let bx = fuzz_box(&mut rng, &sys);
            let c = contractive_check(&sys, &fs, &bx).map_err(|e| e.to_string())?;
            ensure!(c.holds, "{name}: tuple {i} gives {} > {}", c.lhs_sq, c.rhs_sq);
            total += 1;
        }
    }
    Ok(format!("{total} fuzzed tuples"))
}

fn vdc_identity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut total = 0;
    for (name, sys, tuples) in finite_corpus() {
        let fuzzed: Vec<Vec<Observable>> = (0..100).map(|_| fuzz_tuple(&mut rng, sys.n(), sys.d())).collect();
        for fs in tuples.iter().chain(&fuzzed) {
            let v = vdc_identity_check(&sys, fs).map_err(|e| e.to_string())?;
            ensure!(
                v.holds && v.lhs_sq == v.rhs_sq,
                "{name}: {} != {}",
                v.lhs_sq,
                v.rhs_sq
            );
            total += 1;
        }
    }
    Ok(format!("{total} tuples, exact equality"))
}

/// Every `(f_1, 1_{x_2}, ..., 1_{x_d})` limit, by brute force.
fn basis_limits_vanish(sys: &FiniteSystem, f1: &Observable) -> bool {
    let (n, d) = (sys.n(), sys.d());
    let count = n.pow((d - 1) as u32);
    (0..count).all(|mut code| {
        let mut fs = vec![f1.clone()];
        for _ in 1..d {
            fs.push(Observable::indicator(n, code % n));
            code /= n;
        }
        exact_limit(sys, &fs).unwrap().is_zero()
    })
}

fn vdc_condition() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (mut checked, mut held) = (0, 0);
    for (name, sys, tuples) in finite_corpus() {
        let xi = pleasant_factor(&sys);
        let mut candidates: Vec<Observable> = tuples.iter().map(|t| t[0].clone()).collect();
        candidates.extend((0..30).map(|_| fuzz_observable(&mut rng, sys.n())));
        let centered: Vec<Observable> = candidates
            .iter()
            .map(|g| g.sub(&cond_expect(&sys, g, &xi).unwrap()))
            .collect();
        for f1 in candidates.iter().chain(&centered) {
            let c = vdc_condition_check(&sys, f1).map_err(|e| e.to_string())?;
            checked += 1;
            if c.holds {
                held += 1;
                ensure!(
                    basis_limits_vanish(&sys, f1),
                    "{name}: counterexample {:?}",
                    f1.to_strings()
                );
                ensure!(
                    c.limits_vanish == Some(true),
                    "{name}: report disagrees with brute force"
                );
            }
        }
    }
    ensure!(held > 0, "the condition never held; the check is vacuous");
    Ok(format!(
        "{checked} first functions, {held} satisfy the condition, no counterexample"
    ))
}

fn pleasant_reduction() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let loaded = load(&root().join("scenarios/cyclic-5.json")).map_err(|e| e.to_string())?;
    let ext = one_step_extension(loaded.finite().map_err(|e| e.to_string())?.0);
    let sys = &ext.system;
    ensure!(
        is_pleasant(sys).map_err(|e| e.to_string())?.pleasant,
        "extension is not pleasant"
    );
    let parts = pleasant_constituents(sys);
    let n = sys.n();
    for i in 0..100 {
        let terms = rng.gen_range(1..=3);
        let tuples: Vec<Vec<Observable>> = (0..terms)
            .map(|_| {
                parts
                    .iter()
                    .map(|p| cond_expect(sys, &fuzz_observable(&mut rng, n), p).unwrap())
                    .collect()
            })
            .collect();
        let rest = fuzz_tuple(&mut rng, n, sys.d() - 1);
        let f = tuples.iter().fold(Observable::zero(n), |acc, t| {
            acc.add(&t.iter().skip(1).fold(t[0].clone(), |p, h| p.mul(h)))
        });
        let mut fs = vec![f];
        fs.extend(rest.iter().cloned());
        let direct = exact_limit(sys, &fs).unwrap();
        let reduced = reduce_pleasant_limit(sys, &tuples, &rest).map_err(|e| format!("input {i}: {e}"))?;
        ensure!(reduced == direct, "input {i}: reduced limit differs");
    }
    Ok(format!("100 decomposable inputs on {n} states"))
}

fn host_kra() -> Outcome {
    let mut stages = 0;
    for (name, sys, _) in finite_corpus() {
        ensure!(sys.d() <= 3, "{name}: d = {}", sys.d());
        let tower = host_kra_tower(&sys).map_err(|e| e.to_string())?;
        ensure!(tower.len() == sys.d(), "{name}: tower height {}", tower.len());
        for (k, jm) in tower.iter().enumerate() {
            let dim = k + 1;
            ensure!(
                jm.power() == 1 << dim,
                "{name}: stage {dim} has power {}",
                jm.power()
            );
            ensure!(jm.marginals_match_base(), "{name}: stage {dim} marginals differ");
            ensure!(
                jm.invariance_failures().is_empty(),
                "{name}: stage {dim} not invariant"
            );
            let t1 = &jm.actions()[0];
            for tuple in jm.mass().keys() {
                for axis in 0..sys.r() {
                    let want: Vec<usize> = tuple
                        .iter()
                        .enumerate()
                        .map(|(alpha, &x)| match alpha {
                            0 => sys.generator(0, axis).apply(x),
                            1 => x,
                            a => sys.generator(a.ilog2() as usize, axis).apply(x),
                        })
                        .collect();
                    ensure!(
                        t1.apply_axis(&sys, axis, tuple) == want,
                        "{name}: stage {dim} first action differs from the closed form at {tuple:?}"
                    );
                }
            }
            stages += 1;
        }
        if name == "cyclic-5" {
            let first = &tower[0];
            let n = sys.n();
            ensure!(
                first.support_size() == n * n,
                "cyclic-5: support {}",
                first.support_size()
            );
            for x in 0..n {
                for y in 0..n {
                    ensure!(
                        first.mass_of(&[x, y]) == sys.weight(x) * sys.weight(y),
                        "cyclic-5: mu^[1] differs from the product at ({x},{y})"
                    );
                }
            }
        }
    }
    Ok(format!("{stages} tower stages match the closed form"))
}

fn invocations(path: &Path, loaded: &Loaded) -> Vec<Vec<String>> {
    let p = path.to_str().unwrap().to_string();
    let mut runs: Vec<Vec<&str>> = match loaded.scenario.engine {
        Engine::Torus => vec![
            vec!["validate"],
            vec!["torus-demo"],
            vec!["torus-demo", "--format", "csv"],
        ],
        Engine::Finite => vec![
            vec!["validate"],
            vec!["avg"],
            vec!["avg", "--format", "csv"],
            vec!["limit"],
            vec!["limit", "--format", "csv"],
            vec!["joining"],
            vec!["hk"],
            vec!["extend"],
            vec!["pleasant"],
            vec!["pleasant", "--max-m", "1"],
        ],
    };
    runs.iter_mut()
        .map(|r| {
            let mut v: Vec<String> = r.iter().map(|s| s.to_string()).collect();
            v.extend(["--scenario".to_string(), p.clone()]);
            v
        })
        .collect()
}

fn run_binary(args: &[String], threads: Option<&str>) -> Result<Vec<u8>, String> {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_ergolab"));
    cmd.args(args);
    if let Some(t) = threads {
        cmd.args(["--threads", t]);
    }
    let out = cmd.output().map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!(
            "{args:?} failed: {}",
            String::from_utf8_lossy(&out.stderr)
        ));
    }
    Ok(out.stdout)
}

fn determinism() -> Outcome {
    let mut reports = 0;
    for (path, loaded) in corpus() {
        for args in invocations(&path, &loaded) {
            let first = run_binary(&args, None)?;
            ensure!(!first.is_empty(), "{args:?}: empty report");
            ensure!(
                run_binary(&args, None)? == first,
                "{args:?}: differs between runs"
            );
            let one = run_binary(&args, Some("1"))?;
            let eight = run_binary(&args, Some("8"))?;
            ensure!(one == eight, "{args:?}: 1 and 8 threads differ");
            ensure!(one == first, "{args:?}: thread flag changes the report");
            reports += 1;
        }
    }
    Ok(format!(
        "{reports} reports byte-identical across runs and 1/8 threads"
    ))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 10] = [
        ("torus counterexample identity", torus_identity),
        ("cyclic-5 defect and pleasant extension", cyclic_counterexample),
        ("Furstenberg joining properties", furstenberg_properties),
        ("deviation bound and exact period averages", deviation_bounds),
        ("contractive inequality", contractive_inequality),
        ("van der Corput identity", vdc_identity),
        ("vanishing joining integrals kill basis limits", vdc_condition),
        ("pleasant reduction", pleasant_reduction),
        ("Host-Kra tower closed form", host_kra),
        ("report determinism", determinism),
    ];
    let mut failed = 0;
    for (i, (label, check)) in criteria.iter().enumerate() {
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        match outcome {
            Ok(detail) => println!("criterion {:>2} PASS  {label}: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {:>2} FAIL  {label}: {why}", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
