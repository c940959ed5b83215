use std::collections::BTreeMap;
use std::time::Instant;

use serde_json::Value;

use robustutil::dual::{DualOptions, Kkt};
use robustutil::orlicz::{amemiya_norm, luxemburg_norm, Modular, ModularKind};
use robustutil::robust::{dual_value_curve, solve_robust, RobustOptions};
use robustutil::verifier::{minimax_check, verify_bs, BSOracle, MinimaxOptions};
use robustutil::{
    feasibility_check, gauss_hermite_market, random_scenario, ConstraintSet, FiniteMarket, LognormalSpec, Scenario,
    ScenarioFile, UtilityFunction, TERMINAL_PRICE,
};

use crate::args::{BsArgs, Command, Common, Format, GenArgs, ScenarioKind, VcurveArgs};
use crate::output::{cell, csv_text, object, Doc};
use crate::CliError;

/// A finished command: the document text and the exit code it implies.
pub struct Outcome {
    pub text: String,
    pub code: u8,
}

impl Outcome {
    fn ok(text: String) -> Self {
        Self { text, code: 0 }
    }
}

pub fn run(command: &Command, common: &Common) -> Result<Outcome, CliError> {
    if !(common.tol > 0.0 && common.tol.is_finite()) {
        return Err(CliError::Input(format!("--tol must be positive, got {}", common.tol)));
    }
    match command {
        Command::Solve => solve(common),
        Command::VerifyBs(a) => verify(common, a),
        Command::Minimax => minimax(common),
        Command::Norms => norms(common),
        Command::Vcurve(a) => vcurve(common, a),
        Command::Feasibility => feasibility(common),
        Command::GenScenario(a) => gen_scenario(common, a),
    }
}

pub fn name(command: &Command) -> &'static str {
    match command {
        Command::Solve => "solve",
        Command::VerifyBs(_) => "verify-bs",
        Command::Minimax => "minimax",
        Command::Norms => "norms",
        Command::Vcurve(_) => "vcurve",
        Command::Feasibility => "feasibility",
        Command::GenScenario(_) => "gen-scenario",
    }
}

fn config(doc: &mut Doc, name: &'static str, c: &Common, extra: Vec<(&'static str, Value)>) -> Value {
    let mut pairs = vec![
        ("command", Value::from(name)),
        (
            "scenario",
            c.scenario
                .as_ref()
                .map_or(Value::Null, |p| Value::from(p.display().to_string())),
        ),
        ("utility", Value::from(c.utility.clone())),
        ("wealth", doc.num("config.wealth", c.wealth)),
        ("tol", doc.num("config.tol", c.tol)),
        ("nodes", Value::from(c.nodes)),
        ("seed", Value::from(c.seed)),
        ("format", Value::from(c.format.as_str())),
        ("threads", Value::from(c.threads)),
    ];
    pairs.extend(extra);
    object(pairs)
}

fn document(doc: Doc, pairs: Vec<(&'static str, Value)>) -> Result<String, CliError> {
    let mut pairs = pairs;
    pairs.push(("version", Value::from(env!("CARGO_PKG_VERSION"))));
    let value = doc.finish(object(pairs)).map_err(|e| CliError::Output(e.0))?;
    let mut text = serde_json::to_string_pretty(&value).map_err(|e| CliError::Output(e.to_string()))?;
    text.push('\n');
    Ok(text)
}

fn utility(c: &Common) -> Result<UtilityFunction, CliError> {
    c.utility.parse().map_err(CliError::Core)
}

fn load(c: &Common) -> Result<Scenario, CliError> {
    let path = c
        .scenario
        .as_ref()
        .ok_or_else(|| CliError::Input("this command needs --scenario PATH".into()))?;
    Ok(Scenario::load(path)?)
}

/// Scenario if given, otherwise the lognormal quadrature market (σ=0.5, T=1)
/// without constraints.
fn load_or_default(c: &Common) -> Result<Scenario, CliError> {
    if c.scenario.is_some() {
        return load(c);
    }
    let market = gauss_hermite_market(&LognormalSpec::new(0.5, 1.0, 1.0, c.nodes)?)?;
    Ok(Scenario {
        market,
        constraints: ConstraintSet::empty(),
        vectors: BTreeMap::new(),
        densities: Vec::new(),
    })
}

fn dual_options(c: &Common) -> DualOptions {
    DualOptions {
        tol: c.tol,
        seed: c.seed,
        ..DualOptions::default()
    }
}

fn elapsed_ms(c: &Common, started: Instant) -> f64 {
    if c.timing {
        started.elapsed().as_secs_f64() * 1e3
    } else {
        0.0
    }
}

fn kkt_value(doc: &mut Doc, k: &Kkt) -> Value {
    object([
        ("grad_norm", doc.num("kkt.grad_norm", k.grad_norm)),
        ("normalization_residual", doc.num("kkt.normalization_residual", k.normalization_residual)),
        ("constraint_residuals", doc.nums("kkt.constraint_residuals", &k.constraint_residuals)),
        (
            "complementarity_residuals",
            doc.nums("kkt.complementarity_residuals", &k.complementarity_residuals),
        ),
        ("max_residual", doc.num("kkt.max_residual", k.max_residual())),
    ])
}

fn solve(c: &Common) -> Result<Outcome, CliError> {
    let uf = utility(c)?;
    let scenario = load(c)?;
    let started = Instant::now();
    let opts = RobustOptions {
        dual: dual_options(c),
        ..RobustOptions::default()
    };
    let sol = solve_robust(&scenario.market, &scenario.constraints, &uf, c.wealth, &opts)?;
    let wall = elapsed_ms(c, started);
    if c.format == Format::Csv {
        let m = &scenario.market;
        let names: Vec<&String> = m.observables().keys().collect();
        let mut header = vec!["state_index".to_string(), "prob".to_string()];
        header.extend(names.iter().map(|n| n.to_string()));
        header.extend(["Z_hat".to_string(), "X_hat".to_string()]);
        let rows: Vec<Vec<String>> = (0..m.n())
            .map(|i| {
                let mut r = vec![i.to_string(), cell(m.probs()[i])];
                r.extend(names.iter().map(|n| cell(m.observables()[*n][i])));
                r.extend([cell(sol.z_hat[i]), cell(sol.x_hat[i])]);
                r
            })
            .collect();
        let comment = format!(
            "x={},y_hat={},u={},v_at_y_hat={},budget_residual={},iterations={}",
            cell(sol.x),
            cell(sol.y_hat),
            cell(sol.u_value),
            cell(sol.v_at_y_hat),
            cell(sol.diagnostics.budget_residual),
            sol.diagnostics.iterations
        );
        return Ok(Outcome::ok(csv_text(Some(comment), &header, &rows)?));
    }
    let mut doc = Doc::default();
    let d = &sol.diagnostics;
    let cfg = config(&mut doc, "solve", c, vec![]);
    let solution = object([
        ("x", doc.num("x", sol.x)),
        ("y_hat", doc.num("y_hat", sol.y_hat)),
        ("u", doc.num("u", sol.u_value)),
        ("v_at_y_hat", doc.num("v_at_y_hat", sol.v_at_y_hat)),
        ("Z_hat", doc.nums("Z_hat", &sol.z_hat)),
        ("X_hat", doc.nums("X_hat", &sol.x_hat)),
    ]);
    let diagnostics = object([
        ("kkt", kkt_value(&mut doc, &d.kkt)),
        ("budget_residual", doc.num("budget_residual", d.budget_residual)),
        ("iterations", Value::from(d.iterations)),
        ("wall_time_ms", doc.num("wall_time_ms", wall)),
        ("normalization_residual", doc.num("normalization_residual", d.normalization_residual)),
        (
            "worst_case_value_residual",
            doc.num("worst_case_value_residual", d.worst_case_value_residual),
        ),
        ("saddle_gap", doc.num("saddle_gap", d.saddle_gap)),
        ("superdifferential_margin", doc.num("superdifferential_margin", d.superdifferential_margin)),
        ("levels", Value::from(d.levels)),
        ("invariants_hold", Value::from(d.invariants_hold)),
    ]);
    let text = document(
        doc,
        vec![("config", cfg), ("solution", solution), ("diagnostics", diagnostics)],
    )?;
    Ok(Outcome::ok(text))
}

fn verify(c: &Common, a: &BsArgs) -> Result<Outcome, CliError> {
    let oracle = BSOracle::new(a.sigma, a.t, a.a, c.wealth)?;
    let opts = RobustOptions {
        dual: dual_options(c),
        ..RobustOptions::default()
    };
    let report = verify_bs(&oracle, c.nodes, a.check_tol, &opts)?;
    // human-readable table on standard error, document on the output
    eprintln!("{:<12} {:>16} {:>16} {:>11} {:>11}  result", "quantity", "computed", "expected", "abs err", "rel err");
    for r in &report.rows {
        eprintln!(
            "{:<12} {:>16.10} {:>16.10} {:>11.3e} {:>11.3e}  {}",
            r.quantity,
            r.computed,
            r.expected,
            r.abs_error,
            r.rel_error,
            if r.pass { "PASS" } else { "FAIL" }
        );
    }
    eprintln!(
        "{} at {} nodes (tolerance {:.0e}, max relative error {:.3e})",
        if report.pass { "PASS" } else { "FAIL" },
        report.nodes,
        report.tolerance,
        report.max_rel_error
    );
    let code = if report.pass { 0 } else { 3 };
    let wall = if c.timing { report.runtime_ms } else { 0.0 };
    if c.format == Format::Csv {
        let header: Vec<String> = ["quantity", "computed", "expected", "abs_error", "rel_error", "pass"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let rows: Vec<Vec<String>> = report
            .rows
            .iter()
            .map(|r| {
                vec![
                    r.quantity.clone(),
                    cell(r.computed),
                    cell(r.expected),
                    cell(r.abs_error),
                    cell(r.rel_error),
                    r.pass.to_string(),
                ]
            })
            .collect();
        let comment = format!(
            "nodes={},tolerance={},max_rel_error={},pass={}",
            report.nodes,
            cell(report.tolerance),
            cell(report.max_rel_error),
            report.pass
        );
        return Ok(Outcome {
            text: csv_text(Some(comment), &header, &rows)?,
            code,
        });
    }
    let mut doc = Doc::default();
    let extra = vec![
        ("sigma", doc.num("config.sigma", a.sigma)),
        ("T", doc.num("config.T", a.t)),
        ("A", doc.num("config.A", a.a)),
    ];
    let cfg = config(&mut doc, "verify-bs", c, extra);
    let rows: Vec<Value> = report
        .rows
        .iter()
        .map(|r| {
            object([
                ("quantity", Value::from(r.quantity.clone())),
                ("computed", doc.num("computed", r.computed)),
                ("expected", doc.num("expected", r.expected)),
                ("abs_error", doc.num("abs_error", r.abs_error)),
                ("rel_error", doc.num("rel_error", r.rel_error)),
                ("pass", Value::from(r.pass)),
            ])
        })
        .collect();
    let cf = &report.closed_form;
    let closed = object([
        ("K", doc.num("K", cf.k)),
        ("u", doc.num("u", cf.u)),
        ("y_hat", doc.num("y_hat", cf.y_hat)),
        ("beta_at_y_hat", doc.num("beta", cf.beta_at_y_hat)),
        ("g_at_y_hat", doc.num("g", cf.g_at_y_hat)),
    ]);
    let result = object([
        ("pass", Value::from(report.pass)),
        ("tolerance", doc.num("tolerance", report.tolerance)),
        ("max_rel_error", doc.num("max_rel_error", report.max_rel_error)),
        ("closed_form", closed),
        ("comparisons", Value::Array(rows)),
        ("wall_time_ms", doc.num("wall_time_ms", wall)),
    ]);
    Ok(Outcome {
        text: document(doc, vec![("config", cfg), ("verification", result)])?,
        code,
    })
}

fn minimax(c: &Common) -> Result<Outcome, CliError> {
    let uf = utility(c)?;
    let scenario = load(c)?;
    if scenario.densities.is_empty() {
        return Err(CliError::Input("scenario has no 'densities' for the minimax check".into()));
    }
    let opts = MinimaxOptions {
        seed: c.seed,
        ..MinimaxOptions::default()
    };
    let r = minimax_check(&scenario.market, &scenario.densities, &uf, c.wealth, &opts)?;
    if c.format == Format::Csv {
        let header: Vec<String> = ["sup_inf", "inf_sup", "gap", "vertex_min", "grid_value", "saddle"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let row = vec![
            cell(r.sup_inf),
            cell(r.inf_sup),
            cell(r.gap),
            cell(r.vertex_min),
            r.grid_value.map(cell).unwrap_or_default(),
            r.saddle.is_some().to_string(),
        ];
        return Ok(Outcome::ok(csv_text(None, &header, &[row])?));
    }
    let mut doc = Doc::default();
    let cfg = config(&mut doc, "minimax", c, vec![]);
    let saddle = match &r.saddle {
        Some(s) => object([
            ("wealth", doc.nums("saddle.wealth", &s.wealth)),
            ("weights", doc.nums("saddle.weights", &s.weights)),
            ("density", doc.nums("saddle.density", &s.density)),
            ("dominant", Value::from(s.dominant)),
        ]),
        None => Value::Null,
    };
    let grid = match r.grid_value {
        Some(g) => doc.num("grid_value", g),
        None => Value::Null,
    };
    let result = object([
        ("sup_inf", doc.num("sup_inf", r.sup_inf)),
        ("inf_sup", doc.num("inf_sup", r.inf_sup)),
        ("gap", doc.num("gap", r.gap)),
        ("vertex_min", doc.num("vertex_min", r.vertex_min)),
        ("hull_weights", doc.nums("hull_weights", &r.hull_weights)),
        ("supergradient_value", doc.num("supergradient_value", r.supergradient_value)),
        ("interior_point_value", doc.num("interior_point_value", r.interior_point_value)),
        ("grid_value", grid),
        ("saddle", saddle),
    ]);
    Ok(Outcome::ok(document(doc, vec![("config", cfg), ("minimax", result)])?))
}

fn norms(c: &Common) -> Result<Outcome, CliError> {
    let uf = utility(c)?;
    let scenario = load_or_default(c)?;
    let m: &FiniteMarket = &scenario.market;
    let mut vectors = scenario.vectors.clone();
    if vectors.is_empty() {
        vectors.insert("ones".to_string(), vec![1.0; m.n()]);
    }
    let i_mod = Modular::new(m, &uf, ModularKind::EtaStar);
    let j_mod = Modular::new(m, &uf, ModularKind::Eta);
    let mut rows = Vec::new();
    for (name, v) in &vectors {
        rows.push((
            name.clone(),
            i_mod.value(v)?,
            luxemburg_norm(&i_mod, v)?,
            amemiya_norm(&i_mod, v)?,
            j_mod.value(v)?,
            luxemburg_norm(&j_mod, v)?,
            amemiya_norm(&j_mod, v)?,
        ));
    }
    if c.format == Format::Csv {
        let header: Vec<String> = ["name", "modular", "luxemburg", "amemiya", "eta_modular", "eta_luxemburg", "eta_amemiya"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let body: Vec<Vec<String>> = rows
            .iter()
            .map(|r| vec![r.0.clone(), cell(r.1), cell(r.2), cell(r.3), cell(r.4), cell(r.5), cell(r.6)])
            .collect();
        return Ok(Outcome::ok(csv_text(None, &header, &body)?));
    }
    let mut doc = Doc::default();
    let cfg = config(&mut doc, "norms", c, vec![]);
    let mut map = serde_json::Map::new();
    for r in &rows {
        let entry = object([
            ("modular", doc.num("modular", r.1)),
            ("luxemburg", doc.num("luxemburg", r.2)),
            ("amemiya", doc.num("amemiya", r.3)),
            ("eta_modular", doc.num("eta_modular", r.4)),
            ("eta_luxemburg", doc.num("eta_luxemburg", r.5)),
            ("eta_amemiya", doc.num("eta_amemiya", r.6)),
        ]);
        map.insert(r.0.clone(), entry);
    }
    Ok(Outcome::ok(document(doc, vec![("config", cfg), ("norms", Value::Object(map))])?))
}

fn vcurve(c: &Common, a: &VcurveArgs) -> Result<Outcome, CliError> {
    let uf = utility(c)?;
    let scenario = load_or_default(c)?;
    let curve = dual_value_curve(&scenario.market, &scenario.constraints, &uf, &a.y, &dual_options(c))?;
    if c.format == Format::Csv {
        let header = vec!["y".to_string(), "v".to_string()];
        let rows: Vec<Vec<String>> = curve.points.iter().map(|(y, v)| vec![cell(*y), cell(*v)]).collect();
        let comment = format!("convex={},decreasing={}", curve.convex, curve.decreasing);
        return Ok(Outcome::ok(csv_text(Some(comment), &header, &rows)?));
    }
    let mut doc = Doc::default();
    let extra = vec![("y", doc.nums("config.y", &a.y))];
    let cfg = config(&mut doc, "vcurve", c, extra);
    let ys: Vec<f64> = curve.points.iter().map(|p| p.0).collect();
    let vs: Vec<f64> = curve.points.iter().map(|p| p.1).collect();
    let result = object([
        ("y", doc.nums("y", &ys)),
        ("v", doc.nums("v", &vs)),
        ("convex", Value::from(curve.convex)),
        ("decreasing", Value::from(curve.decreasing)),
    ]);
    Ok(Outcome::ok(document(doc, vec![("config", cfg), ("vcurve", result)])?))
}

fn feasibility(c: &Common) -> Result<Outcome, CliError> {
    let scenario = load(c)?;
    let report = feasibility_check(&scenario.market, &scenario.constraints, true)?;
    let code = if report.strictly_feasible { 0 } else { 2 };
    if !report.strictly_feasible {
        eprintln!("{}", report.summary());
    }
    if c.format == Format::Csv {
        let header: Vec<String> = ["feasible", "strictly_feasible", "margin"].iter().map(|s| s.to_string()).collect();
        let row = vec![
            report.feasible.to_string(),
            report.strictly_feasible.to_string(),
            cell(report.margin),
        ];
        return Ok(Outcome {
            text: csv_text(None, &header, &[row])?,
            code,
        });
    }
    let mut doc = Doc::default();
    let cfg = config(&mut doc, "feasibility", c, vec![]);
    let witness = match &report.witness {
        Some(w) => doc.nums("witness", w),
        None => Value::Null,
    };
    let result = object([
        ("feasible", Value::from(report.feasible)),
        ("strictly_feasible", Value::from(report.strictly_feasible)),
        ("margin", doc.num("margin", report.margin)),
        ("summary", Value::from(report.summary())),
        ("witness", witness),
    ]);
    Ok(Outcome {
        text: document(doc, vec![("config", cfg), ("feasibility", result)])?,
        code,
    })
}

fn gen_scenario(c: &Common, a: &GenArgs) -> Result<Outcome, CliError> {
    if c.format == Format::Csv {
        return Err(CliError::Input("gen-scenario writes JSON only".into()));
    }
    let file = match a.kind {
        ScenarioKind::Bs => {
            let spec = LognormalSpec::new(a.sigma, a.t, 1.0, c.nodes)?;
            let text = serde_json::json!({
                "generator": {"type": "lognormal", "sigma": spec.sigma, "T": spec.t, "s0": spec.s0, "nodes": spec.nodes},
                "constraints": [{"observable": TERMINAL_PRICE, "kind": "ge", "bound": a.a}],
            });
            ScenarioFile::parse(&text.to_string(), "generated")?
        }
        ScenarioKind::Random => random_scenario(a.states, a.constraints, a.densities, c.seed)?,
    };
    // round-trip through validation so generated files always load
    file.clone().into_scenario()?;
    let mut text = serde_json::to_string_pretty(&file).map_err(|e| CliError::Output(e.to_string()))?;
    text.push('\n');
    Ok(Outcome::ok(text))
}
