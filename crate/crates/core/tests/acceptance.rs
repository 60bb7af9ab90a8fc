//! Acceptance gate: runs every criterion at its stated tolerance and prints
//! one PASS/FAIL line per criterion on stdout (progress goes to stderr).
//! Pass criterion numbers as arguments to run a subset.

mod common;

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};
use std::io::Cursor;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use common::{dense_row, dense_synthesis, fixtures, Fixture};
use stochsynth::abstraction::{build_matrix, build_target_hit, mask_absorbing, memory_estimate, row_sums};
use stochsynth::bench::{bundled, scalable_config, BUNDLED};
use stochsynth::io::config::Config;
use stochsynth::io::container::{read_matrix, read_results, write_matrix, write_results};
use stochsynth::io::prism::{export_prism, parse_prism};
use stochsynth::noise::{Family, NoiseMode};
use stochsynth::sim::{simulate, DisturbanceMode, SimOptions};
use stochsynth::synthesis::{
    synthesize, synthesize_with, SpecKind, StoredAbstraction, SynthesisMode, SynthesisOptions, SynthesisResult,
};

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn log(msg: impl AsRef<str>) {
    eprintln!("    {}", msg.as_ref());
}

fn within(start: Instant, limit: Duration, what: &str) -> Result<f64, String> {
    let t = start.elapsed();
    ensure!(t <= limit, "{what} took {:.1} s, limit {} s", t.as_secs_f64(), limit.as_secs());
    Ok(t.as_secs_f64())
}

fn config(name: &str) -> Config {
    bundled(name).unwrap_or_else(|| panic!("bundled config {name}"))
}

/// The random small systems shared by criteria 2, 3 and 9.
fn oracle_fixtures() -> Vec<Fixture> {
    fixtures(24)
}

fn size_reproduction() -> Outcome {
    let start = Instant::now();
    let mut found = Vec::new();
    for (name, want) in [("bmw_7d", 3_937_500u128), ("traffic_5d", 68_841_472), ("robot_reach_avoid", 741_321)] {
        let model = config(name).build_model().map_err(|e| e.to_string())?;
        let est = memory_estimate(&model).map_err(|e| e.to_string())?;
        let pairs = model.state_input_pairs().unwrap();
        ensure!(pairs == want, "{name}: {pairs} state-input pairs, expected {want}");
        let rows = pairs * model.n_disturbances() as u128;
        ensure!(est.rows == rows, "{name}: estimate counts {} rows, expected {rows}", est.rows);
        found.push(format!("{name} {pairs}"));
    }
    let t = within(start, Duration::from_secs(1), "size reproduction")?;
    Ok(format!("{} in {t:.3} s", found.join(", ")))
}

fn describe_families(fx: &[Fixture]) -> Result<String, String> {
    let mut seen = [0usize; 4];
    let mut dims = [0usize; 4];
    let mut mult = 0;
    for f in fx {
        let m = &f.model;
        let size = m.n_states() * m.n_inputs() * m.n_disturbances();
        ensure!(size <= 10_000, "{}: {size} > 1e4", f.name);
        let i = match m.noise.family {
            Family::Normal { .. } => 0,
            Family::Uniform { .. } => 1,
            Family::Exponential { .. } => 2,
            Family::Beta { .. } => 3,
            Family::Custom(_) => unreachable!(),
        };
        seen[i] += 1;
        dims[m.state.dim()] += 1;
        if m.noise.mode == NoiseMode::Multiplicative {
            mult += 1;
        }
    }
    ensure!(seen.iter().all(|c| *c > 0), "families not all covered: {seen:?}");
    ensure!(dims[1..].iter().all(|c| *c > 0), "dimensions 1-3 not all covered: {dims:?}");
    Ok(format!(
        "normal/uniform/exponential/beta {seen:?}, dims 1/2/3 {:?}, {mult} multiplicative",
        &dims[1..]
    ))
}

fn abstraction_oracle() -> Outcome {
    let start = Instant::now();
    let fx = oracle_fixtures();
    let coverage = describe_families(&fx)?;
    let mut worst = 0.0f64;
    let mut entries = 0usize;
    for f in &fx {
        let m = &f.model;
        let tm = build_matrix(m, 1).map_err(|e| e.to_string())?;
        for x in 0..m.n_states() {
            for u in 0..m.n_inputs() {
                for w in 0..m.n_disturbances() {
                    let dense = dense_row(m, x, u, w);
                    let r = tm.row_index(x, u, w);
                    let mut covered = vec![false; m.n_states()];
                    for c in 0..tm.row_width() {
                        let post = tm.post_state(r, c);
                        covered[post] = true;
                        let d = (tm.row(r)[c] - dense.full[post]).abs();
                        worst = worst.max(d);
                        ensure!(d <= 1e-12, "{}: row ({x},{u},{w}) post {post} differs by {d:e}", f.name);
                        entries += 1;
                    }
                    for (post, cov) in covered.iter().enumerate() {
                        ensure!(
                            *cov == dense.in_window(&m.state, post),
                            "{}: row ({x},{u},{w}) window disagrees at post-state {post}",
                            f.name
                        );
                    }
                }
            }
        }
    }
    let t = within(start, Duration::from_secs(60), "abstraction oracle")?;
    Ok(format!(
        "{} systems ({coverage}), {entries} window entries, max |diff| {worst:e}, {t:.2} s",
        fx.len()
    ))
}

fn synthesis_oracle() -> Outcome {
    let start = Instant::now();
    let fx = oracle_fixtures();
    let mut worst = 0.0f64;
    let mut runs = 0;
    let mut kinds = [0usize; 3];
    for f in &fx {
        kinds[f.spec.kind as usize] += 1;
        let oracle = dense_synthesis(&f.model, &f.spec);
        for mode in [SynthesisMode::Matrix, SynthesisMode::OnTheFly] {
            for threads in [1, 2, 8] {
                let opts = SynthesisOptions {
                    mode,
                    threads,
                    mem_budget: None,
                };
                let res = synthesize(&f.model, &f.spec, &opts).map_err(|e| e.to_string())?;
                runs += 1;
                for k in 1..=f.spec.horizon + 1 {
                    for x in 0..f.model.n_states() {
                        let d = (res.value(k, x) - oracle.values[k - 1][x]).abs();
                        worst = worst.max(d);
                        ensure!(d <= 1e-12, "{} {mode} threads {threads}: k={k} x={x} differs by {d:e}", f.name);
                        if k <= f.spec.horizon {
                            ensure!(
                                res.policy_index(k, x) as u32 == oracle.policy[k - 1][x],
                                "{} {mode} threads {threads}: policy differs at k={k} x={x}",
                                f.name
                            );
                        }
                    }
                }
            }
        }
    }
    let t = within(start, Duration::from_secs(60), "synthesis oracle")?;
    Ok(format!(
        "{} systems (safety/reach/reach-avoid {kinds:?}), {runs} runs over matrix+ofa x threads 1/2/8, max |diff| {worst:e}, policies identical, {t:.2} s",
        fx.len()
    ))
}

fn hash_f64(h: &mut DefaultHasher, v: &[f64]) {
    for x in v {
        x.to_bits().hash(h);
    }
}

fn same_result(a: &SynthesisResult, b: &SynthesisResult) -> bool {
    a.values.len() == b.values.len()
        && a.values.iter().zip(&b.values).all(|(x, y)| x.to_bits() == y.to_bits())
        && a.policy == b.policy
        && a.worst == b.worst
}

fn determinism() -> Outcome {
    let start = Instant::now();
    let mut cfg = config("robot_safety");
    cfg.spec.time_steps = 4;
    let model = cfg.build_model().map_err(|e| e.to_string())?;
    let spec = cfg.build_spec();
    let mut reference: Option<(u64, SynthesisResult)> = None;
    for threads in [1, 2, 8] {
        let tm = build_matrix(&model, threads).map_err(|e| e.to_string())?;
        let mut h = DefaultHasher::new();
        hash_f64(&mut h, &tm.data);
        tm.origins.hash(&mut h);
        let digest = h.finish();
        let stored = StoredAbstraction { matrix: &tm, hit: None };
        let res = synthesize_with(&stored, &model, &spec, threads, SynthesisMode::Matrix).map_err(|e| e.to_string())?;
        drop(tm);
        log(format!("threads {threads}: matrix digest {digest:016x}"));
        match &reference {
            None => reference = Some((digest, res)),
            Some((d, r)) => {
                ensure!(*d == digest, "matrix with {threads} threads differs from 1 thread");
                ensure!(same_result(r, &res), "matrix synthesis with {threads} threads differs");
            }
        }
    }
    let (_, r) = reference.unwrap();
    for threads in [1, 2, 8] {
        let opts = SynthesisOptions {
            mode: SynthesisMode::OnTheFly,
            threads,
            mem_budget: None,
        };
        let res = synthesize(&model, &spec, &opts).map_err(|e| e.to_string())?;
        ensure!(same_result(&r, &res), "on-the-fly synthesis with {threads} threads differs");
    }
    let t = within(start, Duration::from_secs(300), "determinism")?;
    Ok(format!(
        "robot safety T=4 ({} rows): matrix and values/policies bit-identical for threads 1/2/8, on-the-fly identical too, {t:.1} s",
        model.n_states() * model.n_inputs() * model.n_disturbances()
    ))
}

fn probability_integrity() -> Outcome {
    let start = Instant::now();
    let mut cfg = config("robot_safety");
    let mut mins = Vec::new();
    let mut detail = String::new();
    for gamma in [1e-2, 1e-3, 1e-5] {
        cfg.noise.cutting_probability = gamma;
        let model = cfg.build_model().map_err(|e| e.to_string())?;
        let sums = row_sums(&model, 0).map_err(|e| e.to_string())?;
        let over = sums.iter().filter(|(s, _)| *s > 1.0 + 1e-9).count();
        ensure!(over == 0, "gamma {gamma}: {over} rows sum above 1 + 1e-9");
        let interior: Vec<f64> = sums.iter().filter(|(_, i)| *i).map(|(s, _)| *s).collect();
        ensure!(!interior.is_empty(), "gamma {gamma}: no interior rows");
        let min = interior.iter().copied().fold(f64::INFINITY, f64::min);
        let bound = model.noise.normal_mass_inside().unwrap();
        log(format!(
            "gamma {gamma:e}: {} rows, {} interior, min interior sum {min:.6}, erf product {bound:.6}",
            sums.len(),
            interior.len()
        ));
        if gamma == 1e-3 {
            let good = interior.iter().filter(|s| **s >= 0.99).count();
            let frac = good as f64 / interior.len() as f64;
            ensure!(frac >= 0.99, "only {:.2}% of interior rows have sum >= 0.99", 100.0 * frac);
            detail = format!(
                "{} rows <= 1+1e-9, {:.2}% of {} interior rows >= 0.99 (erf product {bound:.4})",
                sums.len(),
                100.0 * frac,
                interior.len()
            );
        }
        mins.push(min);
    }
    ensure!(mins[0] < mins[1] && mins[1] < mins[2], "minimum interior row sums not increasing: {mins:?}");
    let t = start.elapsed().as_secs_f64();
    Ok(format!(
        "{detail}; min interior sums {:.5} < {:.5} < {:.5} for gamma 1e-2/1e-3/1e-5, {t:.1} s",
        mins[0], mins[1], mins[2]
    ))
}

fn binomial_floor(v: f64, n: usize) -> f64 {
    v - 3.0 * (v * (1.0 - v) / n as f64).sqrt()
}

fn closed_loop() -> Outcome {
    let start = Instant::now();

    let cfg = config("robot_safety");
    let model = cfg.build_model().map_err(|e| e.to_string())?;
    let res = synthesize(&model, &cfg.build_spec(), &cfg.synthesis_options()).map_err(|e| e.to_string())?;
    let x0 = vec![0.0, 0.0];
    let i0 = model.state.point_to_index(&x0).unwrap();
    let v = res.value(1, i0);
    let opts = SimOptions {
        x0,
        runs: 100,
        seed: cfg.exec.seed,
        disturbance: DisturbanceMode::Random,
        threads: 0,
    };
    let batch = simulate(&model, &res, &opts).map_err(|e| e.to_string())?;
    let rate = batch.runs.iter().filter(|r| r.satisfied).count() as f64 / 100.0;
    let floor = binomial_floor(v, 100);
    log(format!("safety: V(x0) {v:.4}, empirical {rate:.2}, floor {floor:.4}"));
    ensure!(rate >= floor, "safety: empirical {rate} below {floor:.4} (V = {v:.4})");
    drop(res);

    let cfg = config("robot_reach_avoid");
    let model = cfg.build_model().map_err(|e| e.to_string())?;
    let spec = cfg.build_spec();
    let t_syn = Instant::now();
    let res = synthesize(&model, &spec, &cfg.synthesis_options()).map_err(|e| e.to_string())?;
    log(format!("reach-avoid synthesis {:.1} s", t_syn.elapsed().as_secs_f64()));
    let runs_each = 100;
    let horizon = spec.horizon;
    let n = model.state.dim();
    let mut total_ok = 0usize;
    let mut v_sum = 0.0;
    let mut starts = 0;
    let (mut avoid_runs, mut left_runs) = (0usize, 0usize);
    let mut first_bad = None;
    for a in [-9.0, -8.0, -7.0] {
        for b in [-9.0, -8.0, -7.0] {
            let x0 = vec![a, b];
            let v = res.value(1, model.state.point_to_index(&x0).unwrap());
            let opts = SimOptions {
                x0: x0.clone(),
                runs: runs_each,
                seed: cfg.exec.seed,
                disturbance: DisturbanceMode::Random,
                threads: 0,
            };
            let batch = simulate(&model, &res, &opts).map_err(|e| e.to_string())?;
            let mut ok = 0;
            for (i, run) in batch.runs.iter().enumerate() {
                let mut rep = vec![0.0; n];
                let mut entered_avoid = false;
                let mut left = false;
                for k in 0..=run.steps {
                    match model.state.point_to_index(run.state(k, n)) {
                        Ok(j) => {
                            model.state.write_point(j, &mut rep).unwrap();
                            entered_avoid |= spec.in_avoid(&rep);
                        }
                        Err(_) => left = true,
                    }
                }
                let exhausted = run.steps == horizon && !entered_avoid;
                left_runs += left as usize;
                if !(run.satisfied || exhausted) || entered_avoid {
                    avoid_runs += entered_avoid as usize;
                    first_bad.get_or_insert(format!(
                        "from {x0:?} run {i} stopped after {} steps (avoid entered: {entered_avoid}, left region: {left})",
                        run.steps
                    ));
                }
                ok += run.satisfied as usize;
            }
            log(format!("reach-avoid from {x0:?}: V {v:.4}, {ok}/{runs_each} reached"));
            total_ok += ok;
            v_sum += v;
            starts += 1;
        }
    }
    let total = starts * runs_each;
    let v_mean = v_sum / starts as f64;
    let rate_ra = total_ok as f64 / total as f64;
    let floor_ra = binomial_floor(v_mean, total);
    let summary = format!(
        "aggregate {rate_ra:.4} vs mean V {v_mean:.4} (floor {floor_ra:.4}); {avoid_runs} runs entered A, {left_runs} left the region on the way"
    );
    log(format!("reach-avoid: {summary}"));
    if let Some(bad) = first_bad {
        return Err(format!("reach-avoid: not every run reached T or ran out of time outside A; first: {bad}; {summary}"));
    }
    ensure!(rate_ra >= floor_ra, "reach-avoid: {summary}");
    let t = within(start, Duration::from_secs(600), "closed loop")?;
    Ok(format!(
        "safety V {v:.4} vs empirical {rate:.2} (floor {floor:.4}); reach-avoid 9 starts x {runs_each} runs all reached T or ran out of time outside A, {summary}; {t:.0} s"
    ))
}

fn monotonicity() -> Outcome {
    let start = Instant::now();
    let mut done = Vec::new();
    for (name, _) in BUNDLED {
        let mut cfg = config(name);
        let horizon = match *name {
            "traffic_5d" | "traffic_3d" | "bmw_7d" => 2,
            _ => 3,
        };
        cfg.spec.time_steps = horizon;
        let model = cfg.build_model().map_err(|e| e.to_string())?;
        let spec = cfg.build_spec();
        let opts = SynthesisOptions {
            mode: SynthesisMode::OnTheFly,
            threads: 0,
            mem_budget: None,
        };
        let t = Instant::now();
        let res = synthesize(&model, &spec, &opts).map_err(|e| format!("{name}: {e}"))?;
        let reach = spec.kind != SpecKind::Safety;
        for k in 1..=horizon {
            for (x, (now, later)) in res.values_at(k).iter().zip(res.values_at(k + 1)).enumerate() {
                ensure!((0.0..=1.0).contains(now), "{name}: value {now} at k={k} x={x}");
                if reach {
                    ensure!(now >= later, "{name}: reach value decreased with more steps at k={k} x={x}");
                } else {
                    ensure!(now <= later, "{name}: safety value increased with more steps at k={k} x={x}");
                }
            }
        }
        let max = res.values_at(1).iter().copied().fold(0.0, f64::max);
        log(format!(
            "{name}: T={horizon}, {} states, max V {max:.4}, {:.1} s",
            model.n_states(),
            t.elapsed().as_secs_f64()
        ));
        done.push(format!("{name} T={horizon}"));
    }
    let t = within(start, Duration::from_secs(600), "monotonicity")?;
    Ok(format!("{} ({t:.0} s)", done.join(", ")))
}

fn scaling() -> Outcome {
    let mut points = Vec::new();
    for n in 2..=12 {
        let model = scalable_config(n, 1)
            .and_then(|c| c.build_model())
            .map_err(|e| e.to_string())?;
        ensure!(model.n_states() == 1 << n, "n = {n}: {} states", model.n_states());
        let width = memory_estimate(&model).map_err(|e| e.to_string())?.row_width as f64;
        let work = model.n_states() as f64 * width;
        // repeat small builds so timer resolution does not dominate
        let mut best = f64::INFINITY;
        let mut spent = Duration::ZERO;
        let mut reps = 0;
        while reps < 3 || (spent < Duration::from_millis(200) && reps < 10_000) {
            let t = Instant::now();
            let tm = build_matrix(&model, 1).map_err(|e| e.to_string())?;
            let e = t.elapsed();
            std::hint::black_box(&tm);
            best = best.min(e.as_secs_f64());
            spent += e;
            reps += 1;
        }
        log(format!(
            "n={n:2}: states {:5}, row width {width:5}, n_x*R {work:9}, build {:.3e} s, {:.2} ns per entry",
            model.n_states(),
            best,
            1e9 * best / work
        ));
        points.push((n, work, best));
    }
    for (i, &(n, w, t)) in points.iter().enumerate() {
        for &(m, wm, tm) in &points[..i] {
            ensure!(
                t <= 3.0 * tm * (w / wm),
                "n={n} took {t:.3e} s, more than 3x linear from n={m} ({tm:.3e} s x {:.0})",
                w / wm
            );
        }
    }
    let (_, w_last, t_last) = points[points.len() - 1];
    let (_, w_first, t_first) = points[0];
    Ok(format!(
        "|X| = 2^n for n=2..12; per-entry cost {:.2} ns at n=2, {:.2} ns at n=12, never above 3x linear growth",
        1e9 * t_first / w_first,
        1e9 * t_last / w_last
    ))
}

fn round_trips() -> Outcome {
    let fx = oracle_fixtures();
    let mut worst = 0.0f64;
    let mut files = 0;
    for f in &fx {
        let m = &f.model;
        let mut tm = build_matrix(m, 1).map_err(|e| e.to_string())?;
        let hit = if f.spec.is_reach() {
            mask_absorbing(&mut tm, &m.state, &f.spec);
            Some(build_target_hit(m, &f.spec, 1).map_err(|e| e.to_string())?)
        } else {
            None
        };
        let stored = StoredAbstraction {
            matrix: &tm,
            hit: hit.as_ref(),
        };
        let res = synthesize_with(&stored, m, &f.spec, 1, SynthesisMode::Matrix).map_err(|e| e.to_string())?;

        let mut buf = Vec::new();
        write_results(&res, &mut buf).map_err(|e| e.to_string())?;
        let back = read_results(Cursor::new(&buf)).map_err(|e| format!("{}: {e}", f.name))?;
        ensure!(same_result(&back, &res) && back == res, "{}: result container round trip differs", f.name);

        let mut buf = Vec::new();
        write_matrix(&tm, &mut buf).map_err(|e| e.to_string())?;
        let back = read_matrix(Cursor::new(&buf), &m.state).map_err(|e| format!("{}: {e}", f.name))?;
        ensure!(back == tm, "{}: matrix dump round trip differs", f.name);

        let mut text = Vec::new();
        export_prism(&tm, &mut text).map_err(|e| e.to_string())?;
        let parsed = parse_prism(Cursor::new(&text)).map_err(|e| format!("{}: {e}", f.name))?;
        let sums = parsed.choice_sums(tm.n_inputs * tm.n_disturbances);
        ensure!(sums.len() == tm.rows(), "{}: {} choices, expected {}", f.name, sums.len(), tm.rows());
        for (r, s) in sums.iter().enumerate() {
            let d = (s - tm.row_sum(r)).abs();
            worst = worst.max(d);
            ensure!(d <= 1e-12, "{}: choice {r} sums differ by {d:e}", f.name);
        }
        files += 3;
    }
    // bundled configs survive the text round trip too
    for (name, _) in BUNDLED {
        let cfg = config(name);
        ensure!(Config::parse(&cfg.to_string()).ok() == Some(cfg), "{name}: config text round trip differs");
    }
    Ok(format!(
        "{files} files over {} systems identical after re-read, max per-choice |diff| {worst:e}; {} configs round-trip",
        fx.len(),
        BUNDLED.len()
    ))
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("size reproduction", size_reproduction),
        ("abstraction oracle equivalence", abstraction_oracle),
        ("synthesis oracle equivalence", synthesis_oracle),
        ("determinism across thread counts", determinism),
        ("probability integrity", probability_integrity),
        ("closed-loop statistics", closed_loop),
        ("value monotonicity", monotonicity),
        ("scaling", scaling),
        ("container and explicit-model round trips", round_trips),
    ];
    let selected: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let id = i + 1;
        if !selected.is_empty() && !selected.contains(&id) {
            continue;
        }
        eprintln!("[{id}] {name}");
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS [{id}] {name}: {detail} [{secs:.1} s]"),
            Err(why) => {
                failed += 1;
                println!("FAIL [{id}] {name}: {why} [{secs:.1} s]");
            }
        }
    }
    if failed > 0 {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
