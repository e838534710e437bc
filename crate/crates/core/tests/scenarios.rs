use inertial_sde::config::{
    Checks, DampingSpec, Dynamics, GridSpec, InitialState, RunConfig, Scenario,
};
use inertial_sde::problems::ProblemSpec;
use inertial_sde::scenario::run_scenario;
use inertial_sde::schedules::{DiffusionSchedule, Envelope, StateFactor, TikhonovSchedule};
use inertial_sde::Error;

fn base(scenario: Scenario, out: &std::path::Path) -> RunConfig {
    RunConfig {
        scenario,
        dynamics: Dynamics::Inertial,
        seed: 5,
        n_paths: 8,
        output_dir: out.to_path_buf(),
        records: 60,
        s0: 1.0,
        problem: ProblemSpec::Quadratic {
            matrix: vec![vec![1.0]],
            vector: None,
            constant: None,
        },
        damping: DampingSpec::Power { alpha: 4.0 },
        diffusion: DiffusionSchedule {
            envelope: Envelope::Power { c: 0.5, q: 2.0 },
            state_factor: StateFactor::Unit,
        },
        tikhonov: None,
        grid: GridSpec {
            t0: 1.0,
            horizon: 3.0,
            h: 0.01,
        },
        initial: InitialState {
            x0: vec![1.0],
            v0: None,
        },
        checks: Checks::default(),
    }
}

#[test]
fn consistency_scenario_reports_both_orders() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run_scenario(&base(Scenario::Consistency, tmp.path())).unwrap();
    let sde: f64 = out.get("order_sde").unwrap().parse().unwrap();
    let ode: f64 = out.get("order_ode").unwrap().parse().unwrap();
    assert!(sde > ode, "{sde} vs {ode}");
    assert!(out.dir.join("consistency.csv").exists());
    assert_eq!(out.verdicts.len(), 3);
}

#[test]
fn consistency_scenario_refuses_first_order_dynamics() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = base(Scenario::Consistency, tmp.path());
    cfg.dynamics = Dynamics::FirstOrder;
    assert!(matches!(run_scenario(&cfg), Err(Error::Config { key, .. }) if key == "dynamics"));
}

#[test]
fn pl_scenario_fits_the_linear_rate() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = base(Scenario::Pl, tmp.path());
    cfg.damping = DampingSpec::Constant { c: 2f64.sqrt() };
    cfg.diffusion.envelope = Envelope::Exponential { c: 0.1, a: 1.0 };
    cfg.grid = GridSpec {
        t0: 0.0,
        horizon: 10.0,
        h: 1e-3,
    };
    cfg.records = 101;
    cfg.n_paths = 16;
    let out = run_scenario(&cfg).unwrap();
    assert!(out.passed(), "{:?}", out.summary);
    assert_eq!(out.get("damping_matches_sqrt_2mu"), Some("true"));
    let slope: f64 = out.get("fit_slope").unwrap().parse().unwrap();
    assert!(slope <= -0.4);
}

#[test]
fn pl_scenario_needs_constant_damping() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = base(Scenario::Pl, tmp.path());
    assert!(matches!(run_scenario(&cfg), Err(Error::Config { key, .. }) if key == "damping.kind"));
}

#[test]
fn tikhonov_scenario_selects_the_minimum_norm_solution() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = base(Scenario::Tikhonov, tmp.path());
    cfg.problem = ProblemSpec::Quadratic {
        matrix: vec![vec![1.0, 0.0], vec![0.0, 0.0]],
        vector: Some(vec![1.0, 0.0]),
        constant: Some(0.5),
    };
    cfg.diffusion.envelope = Envelope::Power { c: 0.5, q: 3.0 };
    cfg.tikhonov = Some(TikhonovSchedule { r: 0.9 });
    cfg.grid = GridSpec {
        t0: 1.0,
        horizon: 200.0,
        h: 5e-3,
    };
    cfg.initial.x0 = vec![0.0, 5.0];
    let out = run_scenario(&cfg).unwrap();
    assert!(out.passed(), "{:?} {:?}", out.summary, out.verdicts);
    assert!(out.dir.join("conditions.txt").exists());
    let csv = std::fs::read_to_string(out.dir.join("tikhonov.csv")).unwrap();
    assert!(csv.starts_with("t,mean_dist_sq,mean_gap,control_mean_dist_sq\n"));
}

#[test]
fn tikhonov_scenario_needs_a_schedule() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = base(Scenario::Tikhonov, tmp.path());
    assert!(matches!(run_scenario(&cfg), Err(Error::Config { key, .. }) if key == "tikhonov"));
}

#[test]
fn refused_runs_write_nothing() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("runs");
    let mut cfg = base(Scenario::Rates, &out);
    cfg.grid.horizon = 100.0;
    let err = run_scenario(&cfg).unwrap_err();
    assert_eq!(
        err,
        Error::Hypothesis("rate_ok requires q > 5/2 (rate_ok false)".into())
    );
    assert!(!out.exists());
}
