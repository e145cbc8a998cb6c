use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use fmeasure::condscore::Family;
use fmeasure::covariance::{estimate_error_kernel, ReplicateSet};
use fmeasure::io;
use fmeasure::sim::{simulate_dataset, GpSampler, Setting, SimScenario};
use fmeasure::{fit_surrogate, CurveSet, Grid};
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tempfile::TempDir;

fn fmeasure(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fmeasure"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const SMALL: &str = "\
[scenario]
family = gaussian
setting = brownian_bridge
n = 60
noise = 1
reps = 2
replicates_per_subject = 5
grid_size = 41
";

fn small_scenario() -> SimScenario {
    let mut sc = SimScenario::new(Family::Gaussian, Setting::BrownianBridge, 60, 1.0, f64::NAN);
    sc.reps = 2;
    sc.replicates_per_subject = 5;
    sc.grid_size = 41;
    sc
}

const SETTING1: &str = "\
[scenario]
family = gaussian
setting = sqexp
n = 1000
noise = 5
length_scale = 0.1
reps = 2
";

#[test]
fn simulate_writes_one_row_per_scenario() {
    let dir = TempDir::new().unwrap();
    let cfg = write(dir.path(), "run.cfg", &SETTING1.replace("n = 1000", "n = 500"));
    let out = dir.path().join("res.csv");
    let o = fmeasure(&["simulate", "--config", s(&cfg), "--out", s(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rows = io::read_results(&out).unwrap();
    assert_eq!(rows.len(), 1);
    let r = &rows[0];
    assert_eq!(r.scenario_id, "gaussian-sqexp-n500-noise5-l0.1");
    assert_eq!((r.n, r.noise, r.length_scale, r.reps), (500, 5.0, Some(0.1), 2));
    for v in [r.mean_pn, r.mean_e_n, r.mean_e_co] {
        assert!(v.is_finite() && v > 0.0);
    }
    assert!(String::from_utf8_lossy(&o.stdout).contains("gaussian-sqexp-n500-noise5-l0.1"));
}

#[test]
fn length_scale_sweep_orders_corrected_below_naive() {
    let dir = TempDir::new().unwrap();
    let cfg = write(dir.path(), "run.cfg", &SETTING1.replace("length_scale = 0.1", "length_scale = 0.05, 0.08, 0.1"));
    let out = dir.path().join("res.csv");
    let o = fmeasure(&["simulate", "--config", s(&cfg), "--out", s(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rows = io::read_results(&out).unwrap();
    assert_eq!(rows.len(), 3);
    for r in &rows {
        assert!(r.mean_e_co < r.mean_e_n, "{}: {} !< {}", r.scenario_id, r.mean_e_co, r.mean_e_n);
    }
}

#[test]
fn sweep_lists_expand_to_cartesian_product() {
    let dir = TempDir::new().unwrap();
    let cfg = write(dir.path(), "run.cfg", &SMALL.replace("noise = 1", "noise = 1, 2, 3"));
    let out = dir.path().join("res.csv");
    let o = fmeasure(&["simulate", "--config", s(&cfg), "--out", s(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rows = io::read_results(&out).unwrap();
    let noises: Vec<f64> = rows.iter().map(|r| r.noise).collect();
    assert_eq!(noises, vec![1.0, 2.0, 3.0]);
}

#[test]
fn negative_noise_is_rejected_before_running() {
    let dir = TempDir::new().unwrap();
    let cfg = write(dir.path(), "run.cfg", &SMALL.replace("noise = 1", "noise = -1"));
    let out = dir.path().join("res.csv");
    let o = fmeasure(&["simulate", "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("noise"), "{}", stderr(&o));
    assert!(!out.exists());
}

#[test]
fn unknown_config_key_is_an_input_error() {
    let dir = TempDir::new().unwrap();
    let cfg = write(dir.path(), "run.cfg", &format!("{SMALL}colour = red\n"));
    let o = fmeasure(&["simulate", "--config", s(&cfg), "--out", s(&dir.path().join("r.csv"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("colour"));
}

#[test]
fn thread_count_does_not_change_results() {
    let dir = TempDir::new().unwrap();
    let cfg = write(dir.path(), "run.cfg", &SMALL.replace("reps = 2", "reps = 4"));
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    assert!(fmeasure(&["simulate", "--config", s(&cfg), "--out", s(&a), "--threads", "1"]).status.success());
    assert!(fmeasure(&["simulate", "--config", s(&cfg), "--out", s(&b), "--threads", "3"]).status.success());
    assert_eq!(fs::read(a).unwrap(), fs::read(b).unwrap());
}

#[test]
fn estimate_on_dumped_data_matches_library_fit() {
    let dir = TempDir::new().unwrap();
    let cfg = write(dir.path(), "run.cfg", SMALL);
    let dump = dir.path().join("dump");
    let o = fmeasure(&[
        "simulate",
        "--config",
        s(&cfg),
        "--out",
        s(&dir.path().join("res.csv")),
        "--dump-data",
        s(&dump),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));

    let sc = small_scenario();
    let id = sc.scenario_id();
    let fit_out = dir.path().join("fit.csv");
    let o = fmeasure(&[
        "estimate",
        "--config",
        s(&cfg),
        "--curves",
        s(&dump.join(format!("{id}.curves.csv"))),
        "--replicates",
        s(&dump.join(format!("{id}.replicates.csv"))),
        "--response",
        s(&dump.join(format!("{id}.response.csv"))),
        "--out",
        s(&fit_out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(dir.path().join("fit.diagnostics.txt").exists());

    let d = simulate_dataset(&sc, 0).unwrap();
    let kernel = estimate_error_kernel(&d.replicates).unwrap();
    let pf = fit_surrogate(&d.w, &kernel, &d.y, None, &sc.pipeline_config()).unwrap();

    let report = io::read_report(&fit_out).unwrap();
    assert_eq!(report.field("p_n").unwrap(), pf.p_n.to_string());
    assert_eq!(report.field("beta0").unwrap().parse::<f64>().unwrap(), pf.fit.coef.beta0);
    for (k, b) in pf.fit.coef.beta.iter().enumerate() {
        let got: f64 = report.field(&format!("coef_{}", k + 1)).unwrap().parse().unwrap();
        assert_eq!(got, *b);
    }
    assert_eq!(report.curve("corrected").unwrap().values(), pf.fit.slope.values());
}

fn tiny_dataset(dir: &Path, y: &[f64], reps_of_last: usize) -> (PathBuf, PathBuf, PathBuf) {
    let grid = Grid::unit(11).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let n = y.len();
    let ids: Vec<String> = (0..n).map(|i| format!("s{i}")).collect();
    let w = DMatrix::from_fn(n, 11, |i, j| ((i + 1) as f64 * 0.3 + j as f64 * 0.1).sin() + rand::Rng::gen::<f64>(&mut rng));
    let curves = CurveSet::new(grid.clone(), w).unwrap();
    let subjects: Vec<DMatrix<f64>> = (0..n)
        .map(|i| {
            let r = if i + 1 == n { reps_of_last } else { 3 };
            DMatrix::from_fn(r, 11, |_, _| 0.05 * rand::Rng::gen::<f64>(&mut rng))
        })
        .collect();
    let cp = dir.join("curves.csv");
    let rp = dir.join("reps.csv");
    let yp = dir.join("y.csv");
    io::write_curves(&cp, &curves, &ids).unwrap();
    fs::write(&rp, replicate_csv(&grid, &ids, &subjects)).unwrap();
    io::write_response(&yp, &ids, &DVector::from_column_slice(y)).unwrap();
    (cp, rp, yp)
}

fn replicate_csv(grid: &Grid, ids: &[String], subjects: &[DMatrix<f64>]) -> String {
    let mut s = String::from("t");
    for t in grid.points() {
        s.push_str(&format!(",{t}"));
    }
    s.push('\n');
    for (id, m) in ids.iter().zip(subjects) {
        for r in 0..m.nrows() {
            s.push_str(&format!("curve_{id}_rep_{r}"));
            for v in m.row(r).iter() {
                s.push_str(&format!(",{v}"));
            }
            s.push('\n');
        }
    }
    s
}

#[test]
fn single_replicate_subject_is_named() {
    let dir = TempDir::new().unwrap();
    let y: Vec<f64> = (0..20).map(|i| i as f64).collect();
    let (c, r, yp) = tiny_dataset(dir.path(), &y, 1);
    let cfg = write(dir.path(), "e.cfg", "[scenario]\nfamily = gaussian\n");
    let o = fmeasure(&[
        "estimate", "--config", s(&cfg), "--curves", s(&c), "--replicates", s(&r), "--response", s(&yp),
        "--out", s(&dir.path().join("fit.csv")),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("s19"), "{}", stderr(&o));
}

#[test]
fn one_class_binary_response_is_rejected() {
    let dir = TempDir::new().unwrap();
    let (c, r, yp) = tiny_dataset(dir.path(), &[1.0; 20], 3);
    let cfg = write(dir.path(), "e.cfg", "[scenario]\nfamily = binary\n");
    let o = fmeasure(&[
        "estimate", "--config", s(&cfg), "--curves", s(&c), "--replicates", s(&r), "--response", s(&yp),
        "--out", s(&dir.path().join("fit.csv")),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("response must contain both classes"), "{}", stderr(&o));
}

fn bridge_replicates(dir: &Path, identical: bool) -> PathBuf {
    let grid = Grid::unit(101).unwrap();
    let kernel = fmeasure::sim::brownian_bridge_kernel(1.0, &grid).unwrap();
    let sampler = GpSampler::new(&kernel).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let subjects: Vec<DMatrix<f64>> = (0..100)
        .map(|_| {
            let draws = sampler.sample(20, &mut rng);
            if identical {
                let first = draws.values().row(0).into_owned();
                DMatrix::from_fn(20, 101, |_, j| first[j])
            } else {
                draws.values().clone()
            }
        })
        .collect();
    let reps = ReplicateSet::new(grid, subjects).unwrap();
    let p = dir.join("reps.csv");
    io::write_replicates(&p, &reps).unwrap();
    p
}

#[test]
fn basis_recovers_brownian_bridge_spectrum() {
    let dir = TempDir::new().unwrap();
    let reps = bridge_replicates(dir.path(), false);
    let out = dir.path().join("basis.csv");
    let o = fmeasure(&["basis", "--replicates", s(&reps), "--out", s(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let b = io::read_eigenbasis(&out).unwrap();
    let pi2 = std::f64::consts::PI.powi(2);
    for k in 1..=3 {
        let want = 1.0 / (k as f64 * k as f64 * pi2);
        let got = b.eigenvalues[k - 1];
        assert!((got - want).abs() < 0.15 * want, "k={k}: {got} vs {want}");
    }
    assert!(b.cumulative.windows(2).all(|w| w[1] >= w[0] - 1e-12));
    assert!(b.cumulative.iter().all(|&c| c <= 1.0 + 1e-12));
    assert!((b.cumulative.last().unwrap() - 1.0).abs() < 1e-12);
}

#[test]
fn basis_warns_when_replicates_are_identical() {
    let dir = TempDir::new().unwrap();
    let reps = bridge_replicates(dir.path(), true);
    let out = dir.path().join("basis.csv");
    let o = fmeasure(&["basis", "--replicates", s(&reps), "--out", s(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stderr(&o).contains("all eigenvalues are 0"), "{}", stderr(&o));
    let b = io::read_eigenbasis(&out).unwrap();
    assert!(b.eigenvalues.iter().all(|&l| l == 0.0));
}

/// Smooth full-rank curves (a broad GP plus a rough GP around a mean curve)
/// and a Gaussian response through a fixed slope.
fn inject_inputs(dir: &Path) -> (PathBuf, PathBuf) {
    let n = 400;
    let grid = Grid::unit(101).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut draw = |sigma: f64, l: f64| {
        let kernel = fmeasure::sim::sqexp_kernel(sigma, l, &grid).unwrap();
        GpSampler::new(&kernel).unwrap().sample(n, &mut rng)
    };
    let broad = draw(20.0, 0.3);
    let rough = draw(1.0, 0.05);
    let t = grid.points().to_vec();
    let x = DMatrix::from_fn(n, t.len(), |i, j| broad.values()[(i, j)] + rough.values()[(i, j)] + (3.0 * t[j]).sin());
    let x = CurveSet::new(grid.clone(), x).unwrap();
    let slope: Vec<f64> = t.iter().map(|s| 2.0 * (std::f64::consts::PI * s).cos()).collect();
    let y = DVector::from_fn(n, |i, _| {
        let row: Vec<f64> = (0..t.len()).map(|j| x.values()[(i, j)] * slope[j]).collect();
        grid.integrate(&row) + 0.5 * rand_distr::Distribution::<f64>::sample(&rand_distr::StandardNormal, &mut rng)
    });
    let ids: Vec<String> = (0..n).map(|i| i.to_string()).collect();
    let c = dir.join("clean.csv");
    let yp = dir.join("y.csv");
    io::write_curves(&c, &x, &ids).unwrap();
    io::write_response(&yp, &ids, &y).unwrap();
    (c, yp)
}

#[test]
fn inject_with_zero_noise_reproduces_reference() {
    let dir = TempDir::new().unwrap();
    let (c, y) = inject_inputs(dir.path());
    let cfg = write(dir.path(), "i.cfg", "[scenario]\nnoise = 0\nreplicates_per_subject = 5\n");
    let out = dir.path().join("inject.csv");
    let o = fmeasure(&["inject", "--config", s(&cfg), "--curves", s(&c), "--response", s(&y), "--out", s(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let r = io::read_report(&out).unwrap();
    let e_n: f64 = r.field("E_n").unwrap().parse().unwrap();
    let e_co: f64 = r.field("E_co").unwrap().parse().unwrap();
    assert!(e_n < 1e-20 && e_co < 1e-20, "{e_n} {e_co}");
}

#[test]
fn inject_with_noise_improves_on_naive() {
    let dir = TempDir::new().unwrap();
    let (c, y) = inject_inputs(dir.path());
    let cfg = write(
        dir.path(),
        "i.cfg",
        "[scenario]\nsetting = sqexp\nnoise = 5\nlength_scale = 0.5\nreplicates_per_subject = 20\n",
    );
    let out = dir.path().join("inject.csv");
    let o = fmeasure(&["inject", "--config", s(&cfg), "--curves", s(&c), "--response", s(&y), "--out", s(&out), "--seed", "4"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let r = io::read_report(&out).unwrap();
    let e_n: f64 = r.field("E_n").unwrap().parse().unwrap();
    let e_co: f64 = r.field("E_co").unwrap().parse().unwrap();
    assert!(e_co < e_n, "{e_co} !< {e_n}");
    let grid = io::read_curves(&c).unwrap().curves.grid().clone();
    for name in ["reference", "naive", "corrected"] {
        let curve = r.curve(name).unwrap();
        assert!(curve.grid().same_as(&grid));
        assert!(curve.values().iter().all(|v| v.is_finite()));
    }
}
