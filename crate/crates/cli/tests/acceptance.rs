//! Acceptance suite: one PASS/FAIL line per criterion.

use std::collections::{BTreeMap, BTreeSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use ase_core::effects::{estimate, EffectKind};
use ase_core::fixtures::{
    random_model, random_ordering, random_pmf, random_query, witness_models, witness_query,
    FixtureShape,
};
use ase_core::harness::{read_csv, ResultRow};
use ase_core::oracle::{
    all_orderings, check_binary_monotonic, check_noise_monotonic, ctf_factor_prob, exact_query,
    BinaryPairScm, ConditionalTable, ExactKind, FunctionTable, Subgraphs, DEFAULT_BUDGET,
};
use ase_core::rng::chunk_rng;
use ase_core::schema::ModelFile;
use ase_core::scm::{max_reproduction_error, MmdpScm, StepRow};
use ase_core::stats::spearman;
use ase_core::{EdgeSet, Ordering, Variable};
use rand::Rng;
use rayon::prelude::*;
use sha2::{Digest, Sha256};

type Outcome = Result<String, String>;
type Criterion = Box<dyn Fn() -> Outcome>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn exact_kind(kind: EffectKind) -> ExactKind {
    match kind {
        EffectKind::Tcfe => ExactKind::Tcfe,
        EffectKind::CfAse => ExactKind::CfAse,
        EffectKind::CfPse => ExactKind::CfPse,
        EffectKind::Ase => ExactKind::Ase,
        EffectKind::Fpse => ExactKind::Fpse,
    }
}

fn oracle_equivalence() -> Outcome {
    let start = Instant::now();
    let mut worst = 0.0f64;
    let mut failures = Vec::new();
    for (k, kind) in EffectKind::ALL.into_iter().enumerate() {
        let mut rng = chunk_rng(1000 + k as u64, 0);
        let cases: Vec<(MmdpScm, ase_core::EffectQuery)> = (0..50)
            .map(|_| {
                let scm = random_model(&mut rng, &FixtureShape::default()).unwrap();
                let q = random_query(&mut rng, &scm, kind, 100_000).unwrap();
                (scm, q)
            })
            .collect();
        let ratios: Vec<(f64, f64, f64)> = cases
            .par_iter()
            .map(|(scm, q)| {
                let mc = estimate(scm, kind, q).unwrap();
                let exact = exact_query(scm, q, exact_kind(kind), None, DEFAULT_BUDGET)
                    .unwrap()
                    .value;
                let tol = f64::max(0.02, 4.0 * mc.se);
                ((mc.value - exact).abs() / tol, mc.value, exact)
            })
            .collect();
        for (i, (r, mc, ex)) in ratios.iter().enumerate() {
            worst = worst.max(*r);
            if *r > 1.0 {
                failures.push(format!("{kind} #{i}: mc {mc} exact {ex}"));
            }
        }
    }
    let elapsed = start.elapsed();
    check(
        failures.is_empty() && elapsed <= Duration::from_secs(600),
        format!(
            "250 queries, worst |err|/tol {worst:.3}, {:.1}s {failures:?}",
            elapsed.as_secs_f64()
        ),
    )
}

/// Measure of noise values whose outputs match every pair, from a scan over
/// all breakpoint cells.
fn scan_factor_prob(table: &ConditionalTable, pairs: &[(u32, usize)]) -> f64 {
    let rows: Vec<StepRow> = (0..table.rows.len()).map(|pa| table.step_row(pa)).collect();
    let mut cuts = vec![0.0, 1.0];
    rows.iter()
        .for_each(|r| cuts.extend_from_slice(r.breakpoints()));
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    cuts.windows(2)
        .filter(|w| {
            pairs
                .iter()
                .all(|&(x, pa)| rows[pa].eval(0.5 * (w[0] + w[1])) == x)
        })
        .map(|w| w[1] - w[0])
        .sum()
}

fn factor_probability() -> Outcome {
    let mut rng = chunk_rng(2000, 0);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let domain = rng.random_range(2..=5);
        let configs = rng.random_range(1..=4);
        let rows = (0..configs)
            .map(|_| random_pmf(&mut rng, domain, 0.2))
            .collect();
        let table = ConditionalTable::new(random_ordering(&mut rng, domain), rows).unwrap();
        let k = rng.random_range(1..=4);
        let pairs: Vec<(u32, usize)> = (0..k)
            .map(|_| {
                (
                    rng.random_range(0..domain as u32),
                    rng.random_range(0..configs),
                )
            })
            .collect();
        worst = worst.max(
            (ctf_factor_prob(&table, &pairs).unwrap() - scan_factor_prob(&table, &pairs)).abs(),
        );
    }
    check(worst <= 1e-12, format!("1000 tables, max diff {worst:.2e}"))
}

/// Outputs on the grid of breakpoints and midpoints, checked against the
/// family ordering.
fn rows_noise_monotonic(scm: &MmdpScm) -> bool {
    let layout = scm.layout();
    layout.vars().all(|var| {
        let ordering: &Ordering = match layout.variable(var) {
            Variable::State { .. } => &scm.orderings().states,
            Variable::Action { agent, .. } => &scm.orderings().actions[agent],
        };
        let rows = scm.rows_of_var(var);
        let mut grid: Vec<f64> = Vec::new();
        for r in &rows {
            let mut prev = 0.0;
            for &b in r.breakpoints() {
                grid.extend([0.5 * (prev + b), b]);
                prev = b;
            }
        }
        grid.sort_by(f64::total_cmp);
        grid.dedup();
        let table = FunctionTable {
            rows: rows
                .iter()
                .map(|r| grid.iter().map(|&u| r.eval(u)).collect())
                .collect(),
        };
        check_noise_monotonic(&table, ordering)
    })
}

fn canonical_construction() -> Outcome {
    let mut rng = chunk_rng(3000, 0);
    let mut worst = 0.0f64;
    let mut monotone = 0;
    for _ in 0..100 {
        let scm = random_model(&mut rng, &FixtureShape::default()).unwrap();
        worst = worst.max(max_reproduction_error(&scm));
        monotone += rows_noise_monotonic(&scm) as usize;
    }
    check(
        worst <= 1e-12 && monotone == 100,
        format!("100 models, max table diff {worst:.2e}, {monotone}/100 noise-monotonic"),
    )
}

fn identities() -> Outcome {
    let mut rng = chunk_rng(4000, 0);
    let mut worst = [0.0f64; 3];
    for _ in 0..100 {
        let scm = random_model(&mut rng, &FixtureShape::default()).unwrap();
        let ex = |q: &ase_core::EffectQuery, k, s: Option<&Subgraphs>| {
            exact_query(&scm, q, k, s, DEFAULT_BUDGET).unwrap().value
        };
        let q = random_query(&mut rng, &scm, EffectKind::Ase, 1).unwrap();
        worst[0] =
            worst[0].max((ex(&q, ExactKind::Ase, None) - ex(&q, ExactKind::Fpse, None)).abs());
        let g = scm.cf_pse_subgraph(q.agent, q.time, q.effect_agents);
        let pse = ex(
            &q,
            ExactKind::Pse,
            Some(&Subgraphs {
                g: g.clone(),
                g_star: EdgeSet::default(),
            }),
        );
        let mut swapped = q.clone();
        swapped.action = q.reference.unwrap();
        swapped.reference = Some(q.action);
        let fpse = ex(
            &swapped,
            ExactKind::Fpse,
            Some(&Subgraphs {
                g: scm.complement(&g),
                g_star: EdgeSet::default(),
            }),
        );
        worst[1] = worst[1].max((pse - fpse - ex(&q, ExactKind::Tce, None)).abs());
        let q = random_query(&mut rng, &scm, EffectKind::CfAse, 1).unwrap();
        worst[2] =
            worst[2].max((ex(&q, ExactKind::CfAse, None) - ex(&q, ExactKind::CfFpse, None)).abs());
    }
    check(
        worst.iter().all(|&w| w <= 1e-12),
        format!(
            "100 models each, max |ASE-FPSE| {:.1e}, |PSE-FPSE-TCE| {:.1e}, |cfASE-cfFPSE| {:.1e}",
            worst[0], worst[1], worst[2]
        ),
    )
}

fn factual_zero() -> Outcome {
    let mut rng = chunk_rng(5000, 0);
    let mut nonzero = 0;
    for i in 0..200 {
        let kind = [EffectKind::Tcfe, EffectKind::CfAse, EffectKind::CfPse][i % 3];
        let scm = random_model(&mut rng, &FixtureShape::default()).unwrap();
        let mut q = random_query(&mut rng, &scm, kind, 2000).unwrap();
        q.action = q.trajectory.as_ref().unwrap().action(q.agent, q.time);
        if estimate(&scm, kind, &q).unwrap().value != 0.0 {
            nonzero += 1;
        }
    }
    check(nonzero == 0, format!("200 queries, {nonzero} nonzero"))
}

fn witness() -> Outcome {
    let (canonical, alt) = witness_models().unwrap();
    let exact = |m: &MmdpScm| {
        exact_query(
            m,
            &witness_query(2, 1, 0),
            ExactKind::CfAse,
            None,
            DEFAULT_BUDGET,
        )
        .unwrap()
        .value
    };
    let gap = (exact(&canonical) - exact(&alt)).abs();
    let mc_alt = estimate(&alt, EffectKind::CfAse, &witness_query(2, 100_000, 11)).unwrap();
    let mc_can = estimate(
        &canonical,
        EffectKind::CfAse,
        &witness_query(2, 100_000, 12),
    )
    .unwrap();
    let twin = {
        let (spec, policy, ord) =
            ModelFile::from_parts(canonical.spec(), canonical.policy(), canonical.orderings())
                .into_parts()
                .unwrap();
        ase_core::build_scm(spec, policy, ord).unwrap()
    };
    let mut agree = true;
    let mut detail = String::new();
    for (x, seed) in [(1, 21), (2, 22)] {
        let a = estimate(
            &canonical,
            EffectKind::CfAse,
            &witness_query(x, 100_000, seed),
        )
        .unwrap();
        let b = estimate(
            &twin,
            EffectKind::CfAse,
            &witness_query(x, 100_000, seed + 100),
        )
        .unwrap();
        agree &=
            (a.value - b.value).abs() <= f64::max(0.02, 4.0 * (a.se.powi(2) + b.se.powi(2)).sqrt());
        detail += &format!(" x={x}: {:.4}/{:.4}", a.value, b.value);
    }
    check(
        gap >= 0.05 && (mc_alt.value - mc_can.value).abs() >= 0.05 && agree,
        format!(
            "exact gap {gap:.3}, MC {:.4} vs {:.4}; canonical twins{detail}",
            mc_can.value, mc_alt.value
        ),
    )
}

fn binary_monotonicity() -> Outcome {
    let mut rng = chunk_rng(7000, 0);
    let mut passed = 0;
    for _ in 0..500 {
        let ordering = if rng.random::<bool>() {
            Ordering::identity(2)
        } else {
            Ordering::reversed(2)
        };
        let m = BinaryPairScm::canonical(rng.random(), [rng.random(), rng.random()], &ordering);
        passed += check_binary_monotonic(&m).unwrap() as usize;
    }
    let appendix = BinaryPairScm {
        p_x1: 0.5,
        f_y: [
            StepRow::equal_pieces(&[1, 0, 0]),
            StepRow::equal_pieces(&[1, 0, 1]),
        ],
    };
    let monotone = check_binary_monotonic(&appendix).unwrap();
    let table = appendix.function_table();
    let noise_monotone = all_orderings(2)
        .iter()
        .filter(|o| check_noise_monotonic(&table, o))
        .count();
    check(
        passed == 500 && monotone && noise_monotone == 0,
        format!("{passed}/500 canonical monotonic; counterexample monotonic={monotone}, noise-monotonic orderings {noise_monotone}/2"),
    )
}

fn ase_lab(args: &[&str]) -> Vec<u8> {
    let out = Command::new(env!("CARGO_BIN_EXE_ase-lab"))
        .args(args)
        .env_remove("ASE_LAB_SEED")
        .output()
        .expect("binary runs");
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out.stdout
}

fn tree_digest(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((
                    p.strip_prefix(dir).unwrap().to_path_buf(),
                    Sha256::digest(std::fs::read(&p).unwrap()).to_vec(),
                ));
            }
        }
    }
    out.sort();
    out
}

fn mean(xs: &[f64]) -> Option<f64> {
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}

fn sepsis_trends(dir: &Path) -> Outcome {
    let start = Instant::now();
    let out = dir.join("trust");
    ase_lab(&[
        "experiment",
        "--preset",
        "trust-sweep",
        "--out",
        out.to_str().unwrap(),
    ]);
    let elapsed = start.elapsed();
    let rows = read_csv(&out.join("trust_sweep.csv")).unwrap();
    let mus: BTreeSet<String> = rows.iter().map(|r| r.setting.clone()).collect();
    let mut mus: Vec<(f64, String)> = mus.into_iter().map(|m| (m.parse().unwrap(), m)).collect();
    mus.sort_by(|a, b| a.0.total_cmp(&b.0));
    let series = |direction: &str| -> Vec<(f64, f64)> {
        mus.iter()
            .filter_map(|(mu, label)| {
                let v: Vec<f64> = rows
                    .iter()
                    .filter(|r| {
                        &r.setting == label && r.direction == direction && r.method == "cf_ase"
                    })
                    .map(|r| r.effect)
                    .collect();
                mean(&v).map(|m| (*mu, m))
            })
            .collect()
    };
    let rho = |s: &[(f64, f64)]| {
        let (x, y): (Vec<f64>, Vec<f64>) = s.iter().copied().unzip();
        spearman(&x, &y).unwrap_or(f64::NAN)
    };
    let clin = series("clinician");
    let ai = series("ai");
    let (rho_c, rho_a) = (rho(&clin), rho(&ai));
    let at_one = clin.iter().find(|(mu, _)| *mu == 1.0).map(|p| p.1);
    let blind: Vec<&ResultRow> = rows
        .iter()
        .filter(|r| r.setting == "1" && r.direction == "clinician")
        .collect();
    let blind_zero = !blind.is_empty()
        && blind
            .iter()
            .filter(|r| r.method == "cf_ase")
            .all(|r| r.effect == 0.0);
    let blind_pse = blind
        .iter()
        .filter(|r| r.method == "cf_pse" && r.effect > 0.0)
        .count();
    check(
        rho_c < 0.0 && at_one.is_some_and(|v| v <= 0.05) && rho_a > 0.0 && blind_zero && blind_pse > 0 && elapsed <= Duration::from_secs(1200),
        format!(
            "clinician rho {rho_c:.3}, mean at mu=1 {at_one:?}; ai rho {rho_a:.3}; blind trust cf-ASE all zero={blind_zero}, cf-PSE>0 in {blind_pse}; {:.1}s",
            elapsed.as_secs_f64()
        ),
    )
}

type Key = (usize, usize, usize, u32, String);
type Targets = BTreeMap<Key, (f64, f64)>;

fn key(r: &ResultRow) -> Key {
    (
        r.trajectory_id,
        r.agent,
        r.time,
        r.action,
        r.direction.clone(),
    )
}

/// Mean absolute error per setting against the `target` rows, in file order.
fn errors(rows: &[ResultRow]) -> (Vec<(String, f64)>, Targets) {
    let targets: Targets = rows
        .iter()
        .filter(|r| r.setting == "target")
        .map(|r| (key(r), (r.effect, r.se)))
        .collect();
    let mut settings: Vec<String> = Vec::new();
    let mut acc: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for r in rows.iter().filter(|r| r.setting != "target") {
        if !settings.contains(&r.setting) {
            settings.push(r.setting.clone());
        }
        acc.entry(r.setting.clone())
            .or_default()
            .push((r.effect - targets[&key(r)].0).abs());
    }
    (
        settings
            .into_iter()
            .map(|s| {
                let m = mean(&acc[&s]).unwrap();
                (s, m)
            })
            .collect(),
        targets,
    )
}

fn graph_robustness(dir: &Path) -> Outcome {
    let out = dir.join("graph");
    ase_lab(&[
        "experiment",
        "--preset",
        "graph-robustness",
        "--out",
        out.to_str().unwrap(),
    ]);
    let pert = read_csv(&out.join("policy_perturbation.csv")).unwrap();
    let ord = read_csv(&out.join("ordering_misspecification.csv")).unwrap();
    let (eps_err, targets) = errors(&pert);
    let queries: BTreeSet<_> = targets.keys().map(|k| (k.0, k.1, k.2, k.3)).collect();
    let floor_terms: Vec<f64> = pert
        .iter()
        .filter(|r| r.setting == "0")
        .map(|r| (r.se.powi(2) + targets[&key(r)].1.powi(2)).sqrt())
        .collect();
    let floor = mean(&floor_terms).unwrap();
    let nondecreasing = eps_err.windows(2).all(|w| w[0].1 <= w[1].1);
    let (ord_err, _) = errors(&ord);
    let get = |label: &str| {
        ord_err
            .iter()
            .find(|(s, _)| s == label)
            .map(|p| p.1)
            .unwrap()
    };
    let correct = get("up<down<straight");
    let reversed = get("straight<down<up");
    let worst = ord_err.iter().map(|p| p.1).fold(0.0, f64::max);
    let misspecified_over = ord_err
        .iter()
        .filter(|(s, e)| s != "up<down<straight" && *e > 3.0 * floor)
        .count();
    check(
        queries.len() >= 200 && nondecreasing && correct <= floor && misspecified_over >= 1 && reversed < worst,
        format!(
            "{} queries; eps errors {:?}; floor {floor:.5}; correct {correct:.5}, reversed {reversed:.5}, worst {worst:.5}, {misspecified_over} orderings > 3x floor",
            queries.len(),
            eps_err.iter().map(|(s, e)| format!("{s}:{e:.5}")).collect::<Vec<_>>()
        ),
    )
}

fn determinism(dir: &Path) -> Outcome {
    let fixtures = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures");
    let (model, traj) = (fixtures.join("m2.json"), fixtures.join("m2_factual.json"));
    let (model, traj) = (model.to_str().unwrap(), traj.to_str().unwrap());
    let query = [
        "--model",
        model,
        "--trajectory",
        traj,
        "--kind",
        "cf-ase",
        "--agent",
        "a",
        "--time",
        "0",
        "--action",
        "1",
        "--effect-agents",
        "b",
        "--outcome",
        "final_state==one",
    ];
    let mut mismatched = Vec::new();
    let twice = |name: &str, run: &dyn Fn(&Path) -> Vec<u8>, mismatched: &mut Vec<String>| {
        let (a, b) = (dir.join(format!("{name}-a")), dir.join(format!("{name}-b")));
        std::fs::create_dir_all(&a).unwrap();
        std::fs::create_dir_all(&b).unwrap();
        let (sa, sb) = (run(&a), run(&b));
        let strip = |s: Vec<u8>, d: &Path| {
            String::from_utf8(s)
                .unwrap()
                .replace(d.to_str().unwrap(), "<out>")
        };
        if strip(sa, &a) != strip(sb, &b) || tree_digest(&a) != tree_digest(&b) {
            mismatched.push(name.to_string());
        }
    };
    let effect = |_: &Path| {
        let mut args = vec!["effect"];
        args.extend(query);
        args.extend(["--samples", "20000", "--seed", "3"]);
        ase_lab(&args)
    };
    twice("effect", &effect, &mut mismatched);
    let oracle = |_: &Path| {
        let mut args = vec!["oracle"];
        args.extend(query);
        ase_lab(&args)
    };
    twice("oracle", &oracle, &mut mismatched);
    twice(
        "env",
        &|d: &Path| {
            ase_lab(&[
                "env",
                "graph",
                "--failures",
                "5",
                "--seed",
                "3",
                "--out",
                d.to_str().unwrap(),
            ])
        },
        &mut mismatched,
    );
    twice(
        "sepsis-asset",
        &|d: &Path| {
            ase_lab(&[
                "sepsis-asset",
                "--write",
                d.join("asset.json").to_str().unwrap(),
            ])
        },
        &mut mismatched,
    );
    for (preset, threads) in [("trust-sweep", "1"), ("graph-robustness", "3")] {
        let name = format!("experiment-{preset}");
        let first = dir.join(if preset == "trust-sweep" {
            "trust"
        } else {
            "graph"
        });
        let d = dir.join(&name);
        ase_lab(&[
            "experiment",
            "--preset",
            preset,
            "--out",
            d.to_str().unwrap(),
            "--threads",
            threads,
        ]);
        if tree_digest(&first) != tree_digest(&d) {
            mismatched.push(name);
        }
    }
    check(
        mismatched.is_empty(),
        format!(
            "effect, oracle, env, sepsis-asset, both experiment presets; mismatched {mismatched:?}"
        ),
    )
}

fn main() -> ExitCode {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().to_path_buf();
    let criteria: Vec<(&str, Criterion)> = vec![
        ("oracle equivalence", Box::new(oracle_equivalence)),
        ("factor probability", Box::new(factor_probability)),
        ("canonical construction", Box::new(canonical_construction)),
        ("effect identities", Box::new(identities)),
        ("factual-action zero", Box::new(factual_zero)),
        ("non-identifiability witness", Box::new(witness)),
        ("binary monotonicity", Box::new(binary_monotonicity)),
        (
            "sepsis trends",
            Box::new({
                let p = path.clone();
                move || sepsis_trends(&p)
            }),
        ),
        (
            "graph robustness",
            Box::new({
                let p = path.clone();
                move || graph_robustness(&p)
            }),
        ),
        (
            "determinism",
            Box::new({
                let p = path.clone();
                move || determinism(&p)
            }),
        ),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|e| {
            Err(e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default())
        });
        let secs = start.elapsed().as_secs_f64();
        match result {
            Ok(d) => println!("PASS {:>2} {name} ({secs:.1}s): {d}", i + 1),
            Err(d) => {
                failed += 1;
                println!("FAIL {:>2} {name} ({secs:.1}s): {d}", i + 1);
            }
        }
    }
    println!(
        "{} of {} criteria passed",
        criteria.len() - failed,
        criteria.len()
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
