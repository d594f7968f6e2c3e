//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any fails.
//!
//! Set `KCF_SKIP_TRAINING=1` to skip the DC-motor training criterion while
//! iterating; a skipped criterion still makes the run fail.

mod common;

use std::time::{Duration, Instant};

use common::*;
use kcf::consistency::rrmse_of_function;
use kcf::consistency::{
    certify, certify_matrices, general_eigenvalues, trace_proxy, ConsistencyReport,
};
use kcf::dictionary::{make_bilinear, make_lifted_linear, StateDictionary};
use kcf::learning::{
    loss, loss_and_gradient, train, LossWeights, ModelClass, ParametricBasis, TrainConfig,
};
use kcf::predictor::rollout;
use kcf::regression::{edmd_full, fit_top_block, SnapshotDataset, Split};
use kcf::systems::{collect, ControlSystem, Domain, ExperimentProtocol, InputNonlinearity};
use nalgebra::{DMatrix, DVector};
use rand::Rng;

enum Outcome {
    Pass,
    Fail,
    Skip,
}

struct Suite {
    outcomes: Vec<Outcome>,
    /// Every certified report produced along the way.
    reports: Vec<ConsistencyReport>,
}

impl Suite {
    fn record(&mut self, name: &str, ok: bool, elapsed: Duration, detail: String) {
        let tag = if ok { "PASS" } else { "FAIL" };
        println!("{tag}  {name} ({:.2}s): {detail}", elapsed.as_secs_f64());
        self.outcomes
            .push(if ok { Outcome::Pass } else { Outcome::Fail });
    }

    fn skip(&mut self, name: &str, why: &str) {
        println!("SKIP  {name}: {why}");
        self.outcomes.push(Outcome::Skip);
    }
}

fn spectrum_real_and_bounded(suite: &mut Suite) {
    let t = Instant::now();
    let mut max_im: f64 = 0.0;
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for seed in 0..100 {
        let mut r = rng(seed);
        let (j, l) = random_pair(&mut r);
        let rep = certify_matrices(&j, &l).unwrap();
        for (re, im) in general_eigenvalues(&rep.m_cc).unwrap() {
            max_im = max_im.max(im.abs());
            lo = lo.min(re);
            hi = hi.max(re);
        }
        suite.reports.push(rep);
    }
    let el = t.elapsed();
    let ok = max_im <= 1e-9 && lo >= -1e-8 && hi <= 1.0 + 1e-8 && el < Duration::from_secs(5);
    suite.record(
        "consistency spectrum is real and inside [0, 1]",
        ok,
        el,
        format!("100 pairs, max |Im| = {max_im:.2e}, eigenvalues in [{lo:.3e}, {hi:.6}], limit 5s"),
    );
}

fn basis_invariance(suite: &mut Suite) {
    let t = Instant::now();
    let mut worst_spec: f64 = 0.0;
    let mut worst_trace: f64 = 0.0;
    for seed in 0..50 {
        let mut r = rng(1000 + seed);
        let (basis, data) = random_problem(&mut r, 80);
        let rm = random_lower_block(basis.n_h(), basis.n_psi(), &mut r);
        let moved = basis.change_of_basis(&rm).unwrap();
        let a = certify(&basis, &data).unwrap();
        let b = certify(&moved, &data).unwrap();
        for (x, y) in a.spectrum.iter().zip(&b.spectrum) {
            worst_spec = worst_spec.max((x - y).abs());
        }
        worst_trace = worst_trace.max((a.trace - b.trace).abs());
        suite.reports.push(a);
        suite.reports.push(b);
    }
    let el = t.elapsed();
    let ok = worst_spec <= 1e-8 && worst_trace <= 1e-9 && el < Duration::from_secs(5);
    suite.record(
        "spectrum and trace invariant under block lower-triangular basis change",
        ok,
        el,
        format!("50 changes, max spectrum diff {worst_spec:.2e} (tol 1e-8), max trace diff {worst_trace:.2e} (tol 1e-9), limit 5s"),
    );
}

fn worst_case_sharpness(suite: &mut Suite) {
    let t = Instant::now();
    let mut excess = f64::NEG_INFINITY;
    let mut attain: f64 = 0.0;
    let mut spec_gap: f64 = 0.0;
    let mut batch_vs_direct: f64 = 0.0;
    for seed in 0..20 {
        let mut r = rng(2000 + seed);
        let (basis, data) = random_problem(&mut r, 100);
        let rep = certify(&basis, &data).unwrap();
        let model = fit_top_block(&basis, &data).unwrap();
        let (j, l) = data.lift(&basis).unwrap();
        // Error rows of the fitted one-step predictor for every H coordinate.
        let e = &j - model.forward_matrix() * &l;
        let (eet, jjt) = (&e * e.transpose(), &j * j.transpose());
        let bound = rep.rrmse_max;
        for k in 0..100_000 {
            let v = unit_direction(basis.n_h(), &mut r);
            let val = (v.dot(&(&eet * &v)) / v.dot(&(&jjt * &v))).sqrt();
            if k < 50 {
                let direct = rrmse_of_function(v.as_slice(), &model, &basis, &data).unwrap();
                batch_vs_direct = batch_vs_direct.max((direct - val).abs());
            }
            excess = excess.max(val - bound);
        }
        let worst = rrmse_of_function(&rep.worst_function, &model, &basis, &data).unwrap();
        attain = attain.max((worst - bound).abs());
        let mut general: Vec<f64> = general_eigenvalues(&rep.m_cc)
            .unwrap()
            .iter()
            .map(|c| c.0)
            .collect();
        general.sort_by(f64::total_cmp);
        for (a, b) in general.iter().zip(&rep.spectrum) {
            spec_gap = spec_gap.max((a - b).abs());
        }
        suite.reports.push(rep);
    }
    let el = t.elapsed();
    let ok = excess <= 1e-10
        && attain <= 1e-8
        && spec_gap <= 1e-9
        && batch_vs_direct <= 1e-12
        && el < Duration::from_secs(30);
    suite.record(
        "certified bound is never exceeded and is attained",
        ok,
        el,
        format!(
            "20 problems x 1e5 directions: max(rrmse - bound) = {excess:.2e} (tol 1e-10), \
             worst direction gap {attain:.2e} (tol 1e-8), spectrum gap {spec_gap:.2e} (tol 1e-9), \
             batched vs per-snapshot evaluation {batch_vs_direct:.1e}, limit 30s"
        ),
    );
}

fn exact_case(
    system: &ControlSystem,
    basis: &kcf::NormalBasis,
    data: &SnapshotDataset,
    r: &mut rand_chacha::ChaCha8Rng,
) -> (f64, f64, ConsistencyReport) {
    let rep = certify(basis, data).unwrap();
    let model = fit_top_block(basis, data).unwrap();
    let x0: Vec<f64> = (0..system.n()).map(|_| r.random_range(-1.0..1.0)).collect();
    let inputs = system.random_inputs(200, 1, r);
    let truth = system.simulate(&x0, &inputs, 1.0).unwrap();
    let res = rollout(&model, basis, &x0, &inputs, Some(&truth)).unwrap();
    (rep.cci, res.max_relative_error().unwrap(), rep)
}

fn exact_subspace(suite: &mut Suite) {
    let t = Instant::now();
    let mut r = rng(3000);
    let lin = exact_linear_system(&mut r);
    let lin_data = exact_data(&lin, 500, None, 1);
    let lin_basis = make_lifted_linear(StateDictionary::coordinates(2), 1).unwrap();
    let (c1, e1, r1) = exact_case(&lin, &lin_basis, &lin_data, &mut r);
    let bil = exact_bilinear_system(&mut r);
    let bil_data = exact_data(&bil, 500, Some(20), 2);
    let bil_basis = make_bilinear(StateDictionary::coordinates(2), 1).unwrap();
    let (c2, e2, r2) = exact_case(&bil, &bil_basis, &bil_data, &mut r);
    suite.reports.push(r1);
    suite.reports.push(r2);
    let ok = c1 <= 1e-10 && c2 <= 1e-10 && e1 <= 1e-8 && e2 <= 1e-8;
    suite.record(
        "exact invariant subspace gives zero index and exact rollouts",
        ok,
        t.elapsed(),
        format!(
            "500 snapshots each; linear/lifted-linear cci {c1:.2e}, 200-step max rel err {e1:.2e}; \
             bilinear/bilinear cci {c2:.2e}, max rel err {e2:.2e} (tol 1e-10, 1e-8)"
        ),
    );
}

fn trace_sandwich(suite: &mut Suite) {
    let t = Instant::now();
    let mut violations = 0;
    let mut worst: f64 = 0.0;
    for rep in &suite.reports {
        let b = trace_proxy(&rep.m_cc);
        let slack = (b.lower - rep.cci).max(rep.cci - b.upper);
        worst = worst.max(slack);
        if slack > 1e-10 {
            violations += 1;
        }
    }
    let j = DMatrix::from_row_slice(2, 3, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
    let l = DMatrix::from_row_slice(1, 3, &[1.0, 0.0, 0.0]);
    let rep = certify_matrices(&j, &l).unwrap();
    let b = trace_proxy(&rep.m_cc);
    let eq = (b.lower, rep.cci, b.upper) == (0.5, 1.0, 1.0);
    let ok = violations == 0 && eq && !suite.reports.is_empty();
    suite.record(
        "trace / n_H <= index <= trace",
        ok,
        t.elapsed(),
        format!(
            "{} certified instances, {violations} violations (max slack {worst:.1e}, rounding tol 1e-10); \
             diag(0,1) case gives ({}, {}, {})",
            suite.reports.len(),
            b.lower,
            rep.cci,
            b.upper
        ),
    );
}

fn top_block(suite: &mut Suite) {
    let t = Instant::now();
    let mut worst: f64 = 0.0;
    let mut scale: f64 = 0.0;
    for seed in 0..20 {
        let mut r = rng(4000 + seed);
        let (basis, data) = random_problem(&mut r, 60);
        let full = edmd_full(&basis, &data).unwrap();
        let model = fit_top_block(&basis, &data).unwrap();
        let diff = (full.rows(0, basis.n_h()) - model.forward_matrix()).amax();
        worst = worst.max(diff);
        scale = scale.max(model.forward_matrix().amax());
    }
    suite.record(
        "top rows of the full regression equal the shortcut fit",
        worst <= 1e-12,
        t.elapsed(),
        format!("20 instances, max abs diff {worst:.2e} (tol 1e-12), max |entry| {scale:.2}"),
    );
}

fn gradient_instance(class: ModelClass, seed: u64) -> (f64, f64) {
    let mut r = rng(seed);
    let sbox = Domain::symmetric(2, 1.0);
    let ubox = Domain::symmetric(1, 1.0);
    let mut basis = ParametricBasis::new(class, &sbox, &ubox, 4, 8, &[6, 6], true, &mut r).unwrap();
    let x = uniform(2, 40, &mut r);
    let u = uniform(1, 40, &mut r);
    let xp = DMatrix::from_fn(2, 40, |i, j| {
        let (a, b, v) = (x[(0, j)], x[(1, j)], u[(0, j)]);
        if i == 0 {
            0.9 * a + 0.2 * b * (2.0 * v).tanh()
        } else {
            0.8 * b - 0.3 * a * a + v.sin()
        }
    });
    let data = SnapshotDataset::new(x, xp, u).unwrap();
    let weights = LossWeights {
        alpha: 1e-2,
        alpha_h: 1e-2,
    };
    let g = DVector::from_vec(
        loss_and_gradient(&basis, &data, weights)
            .unwrap()
            .gradient
            .unwrap(),
    );
    let p0 = basis.params();
    let h = 1e-5;
    let mut fd = DVector::zeros(p0.len());
    for i in 0..p0.len() {
        let mut p = p0.clone();
        p[i] = p0[i] + h;
        basis.set_params(&p);
        let fp = loss(&basis, &data, weights).unwrap().loss;
        p[i] = p0[i] - h;
        basis.set_params(&p);
        let fm = loss(&basis, &data, weights).unwrap().loss;
        fd[i] = (fp - fm) / (2.0 * h);
    }
    let rel = (&g - &fd).norm() / g.norm().max(fd.norm());
    let comp = (&g - &fd).amax() / g.amax().max(fd.amax());
    (rel, comp)
}

fn gradient_check(suite: &mut Suite) {
    let t = Instant::now();
    let mut worst: f64 = 0.0;
    let mut parts = Vec::new();
    for (k, class) in [
        ModelClass::Separable,
        ModelClass::Bilinear,
        ModelClass::Linear,
    ]
    .into_iter()
    .enumerate()
    {
        let (rel, comp) = gradient_instance(class, 5000 + k as u64);
        worst = worst.max(rel);
        parts.push(format!("{class:?} {rel:.2e} (max-entry {comp:.2e})"));
    }
    let el = t.elapsed();
    suite.record(
        "reverse-mode loss gradient matches central differences",
        worst <= 1e-5 && el < Duration::from_secs(10),
        el,
        format!(
            "h = 1e-5, relative error ||g - fd|| / ||g||: {} (tol 1e-5), limit 10s",
            parts.join(", ")
        ),
    );
}

fn dc_dataset(f: InputNonlinearity) -> (ControlSystem, SnapshotDataset) {
    let sys = ControlSystem::dc_motor(f);
    let data = collect(&sys, &ExperimentProtocol::dc_motor(0)).unwrap();
    (sys, data)
}

fn data_protocol(suite: &mut Suite) {
    let t = Instant::now();
    let (sys, data) = dc_dataset(InputNonlinearity::Tanh);
    let n = data.len();
    let mut off_boundary_changes = 0;
    let mut boundary_changes = 0;
    for k in 1..n {
        if data.u[(0, k)] != data.u[(0, k - 1)] {
            if k % 40 == 0 {
                boundary_changes += 1;
            } else {
                off_boundary_changes += 1;
            }
        }
    }
    let train = data.indices_of(Split::Train).len();
    let test = data.indices_of(Split::Test).len();
    let dir = std::env::temp_dir().join(format!("kcf-acceptance-{}", std::process::id()));
    kcf::io::write_dataset(
        &dir,
        &data,
        Some(&sys),
        Some(&ExperimentProtocol::dc_motor(0)),
    )
    .unwrap();
    let (back, side) = kcf::io::read_dataset(&dir).unwrap();
    std::fs::remove_dir_all(&dir).ok();
    let ok = n == 10_000
        && off_boundary_changes == 0
        && boundary_changes == n / 40 - 1
        && (train, test) == (8000, 2000)
        && back == data
        && (side.train, side.test, side.snapshots) == (8000, 2000, 10_000);
    suite.record(
        "DC-motor data protocol",
        ok,
        t.elapsed(),
        format!(
            "{n} snapshots, input changes at {boundary_changes} of {} hold boundaries and {off_boundary_changes} elsewhere, \
             split {train}/{test}, CSV round trip {}",
            n / 40 - 1,
            if back == data { "exact" } else { "differs" }
        ),
    );
}

fn test_rrmse(
    data: &SnapshotDataset,
    sys: &ControlSystem,
    class: ModelClass,
    config: &TrainConfig,
    suite: &mut Suite,
) -> (f64, f64) {
    let t = Instant::now();
    let out = train(
        data,
        class,
        config,
        &sys.state_domain,
        &sys.input_domain,
        |_, _| Ok(()),
    )
    .unwrap();
    let secs = t.elapsed().as_secs_f64();
    let test = out.test_report.expect("test split present");
    let v = test.rrmse_max;
    println!(
        "      {:<22} train {:.6}  test {:.6}  ({secs:.0}s)",
        class.label(),
        out.train_report.rrmse_max,
        v
    );
    suite.reports.push(out.train_report);
    suite.reports.push(test);
    (v, secs)
}

fn dc_motor(suite: &mut Suite) {
    let name = "DC-motor trained model classes (paper-scale)";
    if std::env::var_os("KCF_SKIP_TRAINING").is_some() {
        suite.skip(name, "KCF_SKIP_TRAINING is set");
        return;
    }
    let t = Instant::now();
    let paper = TrainConfig::paper_scale();
    let classes = [
        ModelClass::Separable,
        ModelClass::Bilinear,
        ModelClass::Linear,
    ];
    let mut table = Vec::new();
    for f in [InputNonlinearity::Tanh, InputNonlinearity::TanhCos] {
        println!("      dataset {f:?}:");
        let (sys, data) = dc_dataset(f);
        let row: Vec<f64> = classes
            .iter()
            .map(|&c| test_rrmse(&data, &sys, c, &paper, suite).0)
            .collect();
        table.push(row);
    }
    let (t_sep, t_bil, t_lin) = (table[0][0], table[0][1], table[0][2]);
    let (c_sep, c_bil, c_lin) = (table[1][0], table[1][1], table[1][2]);

    println!("      desk-scale timing (tanh):");
    let (sys, data) = dc_dataset(InputNonlinearity::Tanh);
    let desk = TrainConfig::desk();
    let desk_secs: Vec<f64> = classes
        .iter()
        .map(|&c| test_rrmse(&data, &sys, c, &desk, suite).1)
        .collect();
    let desk_max = desk_secs.iter().cloned().fold(0.0, f64::max);

    let checks = [
        ("tanh ordering", t_sep < t_bil && t_bil < t_lin),
        ("tanh separable <= 0.01", t_sep <= 0.01),
        ("tanh linear >= 3x separable", t_lin >= 3.0 * t_sep),
        ("tanh-cos ordering", c_sep < c_bil && c_bil < c_lin),
        ("gap widens", c_bil / c_sep > 0.8 * (t_bil / t_sep)),
        ("desk run < 15 min", desk_max < 900.0),
    ];
    let failed: Vec<&str> = checks.iter().filter(|c| !c.1).map(|c| c.0).collect();
    suite.record(
        name,
        failed.is_empty(),
        t.elapsed(),
        format!(
            "test RRMSE_max tanh sep/bil/lin = {t_sep:.6}/{t_bil:.6}/{t_lin:.6} (lin/sep {:.1}x, bil/sep {:.2}x); \
             tanh-cos = {c_sep:.6}/{c_bil:.6}/{c_lin:.6} (bil/sep {:.2}x vs required > {:.2}x); \
             slowest desk run {desk_max:.0}s{}",
            t_lin / t_sep,
            t_bil / t_sep,
            c_bil / c_sep,
            0.8 * t_bil / t_sep,
            if failed.is_empty() { String::new() } else { format!("; failed: {}", failed.join(", ")) }
        ),
    );
}

fn main() {
    let mut suite = Suite {
        outcomes: Vec::new(),
        reports: Vec::new(),
    };
    println!("acceptance criteria");
    spectrum_real_and_bounded(&mut suite);
    basis_invariance(&mut suite);
    worst_case_sharpness(&mut suite);
    exact_subspace(&mut suite);
    top_block(&mut suite);
    gradient_check(&mut suite);
    data_protocol(&mut suite);
    dc_motor(&mut suite);
    // Last, so that it covers every instance certified above.
    trace_sandwich(&mut suite);

    let pass = suite
        .outcomes
        .iter()
        .filter(|o| matches!(o, Outcome::Pass))
        .count();
    let fail = suite
        .outcomes
        .iter()
        .filter(|o| matches!(o, Outcome::Fail))
        .count();
    let skip = suite.outcomes.len() - pass - fail;
    println!("acceptance: {pass} passed, {fail} failed, {skip} skipped");
    if fail + skip > 0 {
        std::process::exit(1);
    }
}
