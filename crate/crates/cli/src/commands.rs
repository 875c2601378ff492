use std::path::Path;

use ergolq::analytic1d::{
    abg_control_noise, classify_drift_only, classify_control_noise, h_inf_drift_only, theta_star_control_noise, DriftOnly, ControlNoise,
    Verdict1D,
};
use ergolq::ergodic::{classify, default_schedule, regularization_trace, ClassifyOptions, TraceStatus, Verdict};
use ergolq::linalg::min_sym_eig;
use ergolq::model::{find_stabilizer, lambda_of_theta, Strategy};
use ergolq::riccati::{check_h2, check_h3, newton_kleinman, pi_candidates, NkOptions, PinvPolicy};
use ergolq::simulate::{path_statistics, simulate_closed_loop};
use ergolq::stationary::{cost_representation, ergodic_cost, stationary_moments};
use ergolq::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use crate::format::{mat, num, vec};
use crate::problem::Problem;
use crate::{CliError, Common, StrategyArgs};

pub const SEED_ENV: &str = "ERGOLQ_SEED";

/// Loads the problem; `Ok(None)` when `--dump-normalized` already handled it.
fn load(common: &Common) -> Result<Option<Problem>, CliError> {
    let text = std::fs::read_to_string(&common.file)?;
    let problem = Problem::parse(&text)?;
    if common.dump_normalized {
        println!("{}", Problem::to_json(&problem.normalized()));
        return Ok(None);
    }
    Ok(Some(problem))
}

fn parse_list(what: &str, s: &str) -> Result<Vec<f64>, CliError> {
    s.split(',')
        .map(|t| {
            let x: f64 = t.trim().parse().map_err(|_| CliError::Parse(format!("{what}: cannot parse {t:?}")))?;
            if x.is_finite() {
                Ok(x)
            } else {
                Err(CliError::Parse(format!("{what}: non-finite value")))
            }
        })
        .collect()
}

fn parse_matrix(what: &str, s: &str, rows: usize, cols: usize) -> Result<DMatrix<f64>, CliError> {
    let v = parse_list(what, s)?;
    if v.len() != rows * cols {
        return Err(CliError::Dimension(format!("{what}: expected {} entries, got {}", rows * cols, v.len())));
    }
    Ok(DMatrix::from_row_slice(rows, cols, &v))
}

fn seed_override() -> Result<Option<u64>, CliError> {
    match std::env::var(SEED_ENV) {
        Ok(s) => s
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| CliError::Parse(format!("{SEED_ENV}={s:?} is not an unsigned integer"))),
        Err(_) => Ok(None),
    }
}

fn strategy_of(p: &Problem, args: &StrategyArgs) -> Result<Strategy<f64>, CliError> {
    let (n, m) = (p.sys.n(), p.sys.m());
    let base = p.strategy();
    let theta = match (&args.theta, &base) {
        (Some(s), _) => parse_matrix("--theta", s, m, n)?,
        (None, Some(b)) => b.theta.clone(),
        (None, None) => return Err(CliError::Other("no strategy: pass --theta or add \"strategy\" to the file".into())),
    };
    let v = match (&args.v, &base) {
        (Some(s), _) => DVector::from_column_slice(parse_matrix("--v", s, m, 1)?.as_slice()),
        (None, Some(b)) => b.v.clone(),
        (None, None) => DVector::zeros(m),
    };
    Ok(Strategy::new(theta, v))
}

fn print_json(value: serde_json::Value) {
    println!("{}", serde_json::to_string_pretty(&value).expect("report serializes"));
}

fn mat_json(m: &DMatrix<f64>) -> serde_json::Value {
    json!(m.transpose().as_slice())
}

pub fn check(common: &Common, pi0: Option<&str>) -> Result<(), CliError> {
    let Some(p) = load(common)? else { return Ok(()) };
    let (sys, w) = (&p.sys, &p.w);
    let policy = PinvPolicy::default();
    println!("system: n = {}, m = {}, d = {}", sys.n(), sys.m(), sys.channels());

    let theta = match find_stabilizer(sys) {
        Ok(t) => t,
        Err(e) => {
            println!("stabilizer not found ({e})");
            return Err(CliError::NotStabilizing("stabilizer not found".into()));
        }
    };
    println!("stabilizer: Theta = {}, lambda(Theta) = {}", mat(&theta), num(lambda_of_theta(sys, &theta)?));

    let block_min = min_sym_eig(&w.block());
    if block_min > 0.0 {
        println!("cost block: positive definite (min eigenvalue {}); Riccati solution path available", num(block_min));
    } else {
        println!("cost block: not positive definite (min eigenvalue {})", num(block_min));
    }

    if sys.n() == 1 && sys.m() == 1 && sys.channels() == 1 {
        match scalar_verdict(&p) {
            Ok((family, v)) => println!(
                "1-D fast path ({family}): case {}, finite {:?}, solvable {:?}; {}",
                v.case.map_or("none".to_string(), |c| c.to_string()),
                v.finite,
                v.solvable,
                v.description
            ),
            Err(e) => println!("1-D fast path: not applicable ({e})"),
        }
    }

    let candidates: Vec<DMatrix<f64>> = match pi0 {
        Some(s) => vec![parse_matrix("--pi0", s, sys.n(), sys.n())?],
        None => {
            let mut c = Vec::new();
            if let Ok(are) = newton_kleinman(sys, w, &theta, &NkOptions::default()) {
                c.push(are.p);
            }
            c.extend(pi_candidates(sys, w, &policy));
            c
        }
    };
    println!("certificate candidates: {}", candidates.len());

    let mut h3_last = None;
    let mut h3_found = false;
    for pi in &candidates {
        match check_h3(sys, w, pi, None, None, &policy) {
            Ok(c) => {
                let r = &c.residuals;
                println!("H3 holds at Pi0 = {}", mat(&c.pi0));
                println!("  Theta = {}, v = {}, value = {}", mat(&c.theta_bar), vec(&c.v_bar), num(c.value));
                println!(
                    "  residuals: ARE {}, cross-term range {}, offset range {}, eta {}, stability margin {}",
                    num(r.are_residual),
                    num(r.cross_term_defect),
                    num(r.control_offset_defect),
                    num(r.eta_residual),
                    num(r.stability_margin)
                );
                h3_found = true;
                break;
            }
            Err(f) => h3_last = Some(f),
        }
    }
    if !h3_found {
        if let Some(f) = h3_last {
            println!("H3 not established; last failure: {f}");
        }
    }

    let mut h2_last = None;
    let mut h2_found = false;
    for pi in &candidates {
        match check_h2(sys, w, pi, None, None, &policy) {
            Ok(c) => {
                let r = &c.residuals;
                println!("H2 holds at Pi0 = {}; lower bound {}", mat(&c.pi0), num(c.lower_bound));
                println!(
                    "  residuals: inequality slack {}, control weight min eigenvalue {}, cross-term range {}, control offset range {}, state offset range {}",
                    num(r.inequality_slack),
                    num(r.control_weight_min_eig),
                    num(r.cross_term_defect),
                    num(r.control_offset_defect),
                    num(r.state_offset_defect)
                );
                h2_found = true;
                break;
            }
            Err(f) => h2_last = Some(f),
        }
    }
    if !h2_found {
        if let Some(f) = h2_last {
            println!("H2 not established; last failure: {f}");
        }
    }
    Ok(())
}

pub fn eval(common: &Common, args: &StrategyArgs) -> Result<(), CliError> {
    let Some(p) = load(common)? else { return Ok(()) };
    let (sys, w) = (&p.sys, &p.w);
    let st = strategy_of(&p, args)?;
    let e = ergodic_cost(sys, w, &st)?;
    let mo = stationary_moments(sys, &st)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed_override()?.unwrap_or(0));
    let n = sys.n();
    let mut worst = 0.0f64;
    for _ in 0..3 {
        let g = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        let pi = (&g + g.transpose()) * 0.5;
        worst = worst.max((cost_representation(sys, w, &st, &pi)? - e).abs());
    }
    if common.json {
        print_json(json!({
            "cost": e,
            "lambda": lambda_of_theta(sys, &st.theta)?,
            "m1": mo.m1.as_slice(),
            "M2": mat_json(&mo.m2),
            "representation_gap": worst,
        }));
        return Ok(());
    }
    println!("Theta = {}, v = {}", mat(&st.theta), vec(&st.v));
    println!("lambda(Theta) = {}", num(lambda_of_theta(sys, &st.theta)?));
    println!("ergodic cost = {}", num(e));
    println!("representation check: max |gap| over 3 random Pi = {}", num(worst));
    println!("m1 = {}", vec(&mo.m1));
    println!("M2 = {}", mat(&mo.m2));
    println!("covariance = {}", mat(&mo.covariance()));
    Ok(())
}

fn verdict_json(v: &Verdict<f64>) -> serde_json::Value {
    match v {
        Verdict::SolvableWithStrategy { strategy, value, route } => json!({
            "verdict": "solvable",
            "route": format!("{route:?}"),
            "value": value,
            "Theta": mat_json(&strategy.theta),
            "v": strategy.v.as_slice(),
        }),
        Verdict::FiniteWithValue { value, lower_bound } => {
            json!({ "verdict": "finite", "value": value, "lower_bound": lower_bound })
        }
        Verdict::RegularizationDiverged { last_value, last_delta } => {
            json!({ "verdict": "diverging", "last_value": last_value, "last_delta": last_delta })
        }
        Verdict::Inconclusive { reason } => json!({ "verdict": "inconclusive", "reason": reason }),
    }
}

pub fn solve(common: &Common, pi0: Option<&str>) -> Result<(), CliError> {
    let Some(p) = load(common)? else { return Ok(()) };
    let (sys, w) = (&p.sys, &p.w);
    let mut opts = ClassifyOptions::default();
    if let Some(s) = pi0 {
        opts.pi0 = Some(parse_matrix("--pi0", s, sys.n(), sys.n())?);
    }
    if let Some(sc) = &p.file.schedule {
        opts.schedule = sc.clone();
    }
    let report = classify(sys, w, &opts);
    if common.json {
        print_json(json!({ "result": verdict_json(&report.verdict), "notes": report.notes }));
    } else {
        match &report.verdict {
            Verdict::SolvableWithStrategy { strategy, value, route } => {
                println!("verdict: solvable ({route:?})");
                println!("Theta = {}, v = {}", mat(&strategy.theta), vec(&strategy.v));
                println!("value = {}", num(*value));
            }
            Verdict::FiniteWithValue { value, lower_bound } => {
                println!("verdict: finite, no optimal strategy established");
                println!("value = {} (certified lower bound {})", num(*value), num(*lower_bound));
            }
            Verdict::RegularizationDiverged { last_value, last_delta } => {
                println!("verdict: regularization diverging");
                println!("last value {} at delta {}", num(*last_value), num(*last_delta));
            }
            Verdict::Inconclusive { reason } => println!("verdict: inconclusive ({reason})"),
        }
        for note in &report.notes {
            println!("note: {note}");
        }
    }
    match report.verdict {
        Verdict::RegularizationDiverged { .. } => Err(CliError::Diverging("regularization diverging".into())),
        Verdict::Inconclusive { .. } if report.stabilizer.is_none() => {
            Err(CliError::NotStabilizing("stabilizer not found".into()))
        }
        _ => Ok(()),
    }
}

pub fn regularize(common: &Common, schedule: Option<&str>, tol: f64, csv_path: Option<&Path>) -> Result<(), CliError> {
    let Some(p) = load(common)? else { return Ok(()) };
    let schedule = match (schedule, &p.file.schedule) {
        (Some(s), _) => parse_list("--schedule", s)?,
        (None, Some(s)) => s.clone(),
        (None, None) => default_schedule(),
    };
    let tr = regularization_trace(&p.sys, &p.w, &schedule, tol)?;
    if let Some(path) = csv_path {
        let mut out = csv::Writer::from_path(path)?;
        out.write_record(["delta", "value", "theta_norm", "v_norm", "are_residual"])?;
        for e in &tr.entries {
            out.write_record([e.delta, e.value, e.theta_hat.norm(), e.v_hat.norm(), e.are_residual].map(|x| x.to_string()))?;
        }
        out.flush()?;
    }
    let status = match &tr.status {
        TraceStatus::Converged => "converged".to_string(),
        TraceStatus::NotConverged => "not converged".to_string(),
        TraceStatus::Diverging => "diverging".to_string(),
        TraceStatus::Failed { delta, error } => format!("failed at delta {}: {error}", num(*delta)),
    };
    if common.json {
        print_json(json!({
            "status": status,
            "value": tr.limit_estimate,
            "extrapolated": tr.extrapolated,
            "strategy_converged": tr.strategy_converged,
            "entries": tr.entries.iter().map(|e| json!({
                "delta": e.delta,
                "value": e.value,
                "theta_norm": e.theta_hat.norm(),
                "v_norm": e.v_hat.norm(),
                "are_residual": e.are_residual,
            })).collect::<Vec<_>>(),
        }));
    } else {
        println!("{:>20} {:>20} {:>20} {:>20} {:>20}", "delta", "value", "|Theta|", "|v|", "ARE residual");
        for e in &tr.entries {
            println!(
                "{:>20} {:>20} {:>20} {:>20} {:>20}",
                num(e.delta),
                num(e.value),
                num(e.theta_hat.norm()),
                num(e.v_hat.norm()),
                num(e.are_residual)
            );
        }
        println!("status: {status}");
        println!("value at smallest delta: {}", num(tr.limit_estimate));
        if let Some(x) = tr.extrapolated {
            println!("sqrt(delta) extrapolation: {}", num(x));
        }
        println!("strategy settled: {}", tr.strategy_converged);
    }
    match tr.status {
        TraceStatus::Diverging => Err(CliError::Diverging("regularized values diverge".into())),
        TraceStatus::Failed { error, .. } => Err(error.into()),
        _ => Ok(()),
    }
}

pub fn simulate(
    common: &Common,
    args: &StrategyArgs,
    trace: Option<&Path>,
    every: usize,
) -> Result<(), CliError> {
    let Some(p) = load(common)? else { return Ok(()) };
    let (sys, w) = (&p.sys, &p.w);
    let st = strategy_of(&p, args)?;
    let mut cfg = p.sim_config();
    if let Some(seed) = seed_override()? {
        cfg.seed = seed;
    }
    let x0 = p.x0();
    let stats = path_statistics(sys, w, &st, &x0, &cfg)?;
    let exact = ergodic_cost(sys, w, &st)?;
    let abel_ok = cfg.abel_lambda * cfg.horizon >= 20.0;

    if let Some(path) = trace {
        let every = every.max(1);
        let mut out = csv::Writer::from_path(path)?;
        let mut header = vec!["t".to_string()];
        header.extend((1..=sys.n()).map(|i| format!("x{i}")));
        header.push("cesaro".into());
        out.write_record(&header)?;
        let (mut sum, mut step, mut failed) = (0.0, 0usize, None);
        simulate_closed_loop(sys, &st, &x0, &cfg, 0, |t, x| {
            let xv = DVector::from_column_slice(x);
            let g = w.running_cost(&xv, &st.control(&xv));
            if step > 0 {
                sum += g * cfg.dt;
            }
            let avg = if t > 0.0 { sum / t } else { g };
            if step % every == 0 && failed.is_none() {
                let mut row = vec![t.to_string()];
                row.extend(x.iter().map(|v| v.to_string()));
                row.push(avg.to_string());
                failed = out.write_record(&row).err();
            }
            step += 1;
        })?;
        if let Some(e) = failed {
            return Err(e.into());
        }
        out.flush()?;
    }

    if common.json {
        print_json(json!({
            "cesaro_mean": stats.cesaro_mean,
            "cesaro_stderr": stats.cesaro_stderr,
            "abel_mean": abel_ok.then_some(stats.abel_mean),
            "abel_stderr": abel_ok.then_some(stats.abel_stderr),
            "exact": exact,
            "emp_m1": stats.emp_m1.as_slice(),
            "emp_M2": mat_json(&stats.emp_m2),
            "n_paths": stats.n_paths,
            "seed": cfg.seed,
        }));
        return Ok(());
    }
    println!(
        "paths = {}, dt = {}, horizon = {}, burn-in = {}, seed = {}",
        cfg.n_paths,
        num(cfg.dt),
        num(cfg.horizon),
        num(cfg.burn_in),
        cfg.seed
    );
    println!("Cesaro mean = {} +- {}", num(stats.cesaro_mean), num(stats.cesaro_stderr));
    if abel_ok {
        println!("Abel mean = {} +- {} (lambda = {})", num(stats.abel_mean), num(stats.abel_stderr), num(cfg.abel_lambda));
    } else {
        println!("Abel mean not reported: lambda * horizon < 20");
    }
    println!("ergodic cost from moments = {}", num(exact));
    println!("empirical m1 = {} (stderr {})", vec(&stats.emp_m1), vec(&stats.m1_stderr));
    println!("empirical M2 = {}", mat(&stats.emp_m2));
    Ok(())
}

/// Family name and verdict of an `n = m = d = 1` problem.
fn scalar_verdict(p: &Problem) -> Result<(&'static str, Verdict1D<f64>), CliError> {
    let (sys, w) = (&p.sys, &p.w);
    if sys.n() != 1 || sys.m() != 1 || sys.channels() != 1 {
        return Err(CliError::Dimension("classify1d needs n = m = d = 1".into()));
    }
    let s = |m: &DMatrix<f64>| m[(0, 0)];
    let (a, b, c, d) = (s(&sys.a), s(&sys.b), s(&sys.c[0]), s(&sys.d[0]));
    if d != 0.0 {
        let ex = ControlNoise {
            a,
            b,
            c,
            d,
            q: s(&w.q),
            s: s(&w.s),
            r: s(&w.r),
            drift: sys.drift[0],
            sigma: sys.sigma[0][0],
            q_lin: w.q_lin[0],
            rho: w.rho[0],
        };
        return Ok(("D != 0 family", classify_control_noise(&ex)?));
    }
    if b == 0.0 || s(&w.r) != 0.0 || w.q_lin[0] != 0.0 || w.rho[0] != 0.0 {
        return Err(CliError::Other("D = 0 closed forms need B != 0, R = 0 and q = rho = 0".into()));
    }
    let ex = DriftOnly { a, c, b: sys.drift[0], sigma: sys.sigma[0][0], q: s(&w.q), s: s(&w.s) / b };
    Ok(("D = 0 family", classify_drift_only(&ex)))
}

pub fn classify1d(common: &Common) -> Result<(), CliError> {
    let Some(p) = load(common)? else { return Ok(()) };
    let (family, v) = scalar_verdict(&p)?;
    let (sys, w) = (&p.sys, &p.w);
    let mut extra = serde_json::Map::new();
    if sys.d[0][(0, 0)] != 0.0 {
        let ex = ControlNoise::new(sys.a[(0, 0)], sys.b[(0, 0)], sys.c[0][(0, 0)], sys.d[0][(0, 0)], w.q[(0, 0)], w.s[(0, 0)], w.r[(0, 0)]);
        let (alpha, beta, gamma) = abg_control_noise(&ex)?;
        extra.insert("alpha".into(), json!(alpha));
        extra.insert("beta".into(), json!(beta));
        extra.insert("gamma".into(), json!(gamma));
        if let Ok(ts) = theta_star_control_noise(&ex) {
            extra.insert("theta_star".into(), json!(ts.theta));
        }
    } else {
        let ex = DriftOnly {
            a: sys.a[(0, 0)],
            c: sys.c[0][(0, 0)],
            b: sys.drift[0],
            sigma: sys.sigma[0][0],
            q: w.q[(0, 0)],
            s: w.s[(0, 0)] / sys.b[(0, 0)],
        };
        extra.insert("s1".into(), json!(ex.s1()));
        extra.insert("s2".into(), json!(ex.s2()));
        if let Ok(h) = h_inf_drift_only(&ex) {
            extra.insert("h_inf".into(), json!(h));
        }
    }
    let case = v.case.map(|c| c.to_string());
    if common.json {
        let mut obj = json!({
            "family": family,
            "case": case,
            "finite": format!("{:?}", v.finite),
            "solvable": format!("{:?}", v.solvable),
            "description": v.description,
            "value": v.value,
        });
        obj.as_object_mut().expect("object").extend(extra);
        print_json(obj);
        return Ok(());
    }
    println!("family: {family}");
    for (k, x) in &extra {
        println!("{k} = {}", x.as_f64().map_or_else(|| x.to_string(), num));
    }
    match &case {
        Some(c) => println!("case {c}: finite {:?}, solvable {:?}", v.finite, v.solvable),
        None => println!("no case applies: finite {:?}, solvable {:?}", v.finite, v.solvable),
    }
    println!("{}", v.description);
    if let Some(x) = v.value {
        println!("value = {}", num(x));
    }
    Ok(())
}
