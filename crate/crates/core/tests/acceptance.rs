//! Acceptance criteria: simulation table reproduction, exact enumeration
//! oracles and estimator properties.
//!
//! Every check prints one `[PASS]`/`[FAIL]` line. Table reproduction checks
//! report without failing the test; the oracle and property checks must
//! all pass.

use std::io::Write;

use fpcr::data::{ClusterIndex, Dim, PopulationMeta};
use fpcr::dgp::{
    counterexample_population, inclusion_moments, neighbourhood_effect_sum, owfe_estimand_enumerated,
    treatment_cross_moments, twfe_estimand_enumerated, variance_oracle, DesignName, PopulationSpec,
    PotentialOutcomes, ProductRule, UnitModel,
};
use fpcr::linalg::min_eigenvalue;
use fpcr::mestimation::{fit_ols_matrix, owfe_weights, probit_unit, twfe_residualize};
use fpcr::montecarlo::{run_study, StudyConfig, SummaryTable};
use fpcr::shrinkage::{delta_z, delta_z_ce, AdjustmentInputs, ShrinkOptions};
use fpcr::variance::{meat_cluster, meat_ehw, v_cgm, v_cgm2, v_lz_oneway};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SEED: u64 = 7;
const REPS: usize = 10_000;

#[derive(Default)]
struct Ledger {
    passed: usize,
    failed: Vec<String>,
}

impl Ledger {
    fn record(&mut self, id: &str, pass: bool, detail: String) {
        let line = format!("[{}] {id} {detail}", if pass { "PASS" } else { "FAIL" });
        // bypasses the test harness capture
        let _ = writeln!(std::io::stdout().lock(), "{line}");
        if pass {
            self.passed += 1;
        } else {
            self.failed.push(line);
        }
    }

    fn near(&mut self, id: &str, what: &str, value: f64, target: f64, tol: f64) {
        let pass = (value - target).abs() <= tol;
        self.record(id, pass, format!("{what}: {value:.4} (target {target} ± {tol:.4})"));
    }

    fn at_least(&mut self, id: &str, what: &str, value: f64, floor: f64) {
        self.record(id, value >= floor, format!("{what}: {value:.4} (target ≥ {floor})"));
    }

    fn within(&mut self, id: &str, what: &str, value: f64, lo: f64, hi: f64) {
        self.record(id, (lo..=hi).contains(&value), format!("{what}: {value:.4} (target in [{lo}, {hi}])"));
    }

    fn holds(&mut self, id: &str, what: &str, pass: bool) {
        self.record(id, pass, what.to_string());
    }
}

fn study(design: DesignName) -> SummaryTable {
    let table = run_study(&StudyConfig::new(PopulationSpec::paper(design, SEED), REPS)).unwrap();
    let _ = writeln!(
        std::io::stdout().lock(),
        "       {} seed {SEED}: {} replications, {} failed",
        design,
        table.rep_count,
        table.failed_reps
    );
    table
}

fn se(t: &SummaryTable, target: &str, family: &str) -> f64 {
    t.row(target, family).unwrap().mean_se
}

fn cov(t: &SummaryTable, target: &str, family: &str) -> f64 {
    t.row(target, family).unwrap().coverage
}

fn sd(t: &SummaryTable, target: &str) -> f64 {
    t.row(target, "oracle").unwrap().sd
}

/// Published one-way probit values: (target, family, SE, coverage).
const TABLE3_ONEWAY: [(&str, &str, f64, f64); 6] = [
    ("ape", "ehw", 0.0185, 0.918),
    ("ape", "lz-g", 0.0591, 1.000),
    ("ape", "adj-oneway-g", 0.0260, 0.993),
    ("coefficient", "ehw", 0.0531, 0.918),
    ("coefficient", "lz-g", 0.1716, 1.000),
    ("coefficient", "adj-oneway-g", 0.0752, 0.994),
];

const TABLE3_TWOWAY: [(&str, &str, f64, f64); 18] = [
    ("ape", "ehw", 0.0220, 0.755),
    ("ape", "lz-g", 0.0446, 0.972),
    ("ape", "adj-oneway-g", 0.0294, 0.876),
    ("ape", "lz-h", 0.0481, 0.982),
    ("ape", "adj-oneway-h", 0.0321, 0.909),
    ("ape", "cgm", 0.0620, 0.997),
    ("ape", "adj-cgm", 0.0377, 0.955),
    ("ape", "cgm2", 0.0658, 0.999),
    ("ape", "adj-cgm2", 0.0437, 0.980),
    ("coefficient", "ehw", 0.0581, 0.748),
    ("coefficient", "lz-g", 0.1187, 0.973),
    ("coefficient", "adj-oneway-g", 0.0792, 0.879),
    ("coefficient", "lz-h", 0.1284, 0.983),
    ("coefficient", "adj-oneway-h", 0.0867, 0.912),
    ("coefficient", "cgm", 0.1655, 0.998),
    ("coefficient", "adj-cgm", 0.1022, 0.957),
    ("coefficient", "cgm2", 0.1756, 0.999),
    ("coefficient", "adj-cgm2", 0.1180, 0.981),
];

fn criterion_1(l: &mut Ledger) {
    let one = study(DesignName::ProbitOneWay);
    let two = study(DesignName::ProbitTwoWay);
    // coefficient tolerances; the APE column uses the same relative width
    let pinned = [
        (&one, "oracle", 0.0643, 0.0225, 0.006),
        (&one, "lz-g", 0.1716, 0.0591, 0.012),
        (&one, "adj-oneway-g", 0.0752, 0.0260, 0.008),
        (&two, "cgm", 0.1655, 0.0620, 0.012),
        (&two, "cgm2", 0.1756, 0.0658, 0.012),
        (&two, "adj-cgm", 0.1022, 0.0377, 0.010),
        (&two, "adj-cgm2", 0.1180, 0.0437, 0.010),
    ];
    for (t, family, coef, ape, tol) in pinned {
        let design = &t.design;
        if family == "oracle" {
            l.near("1", &format!("{design} coefficient SD"), sd(t, "coefficient"), coef, tol);
            l.near("1", &format!("{design} ape SD"), sd(t, "ape"), ape, tol * ape / coef);
        } else {
            l.near("1", &format!("{design} coefficient {family} SE"), se(t, "coefficient", family), coef, tol);
            l.near("1", &format!("{design} ape {family} SE"), se(t, "ape", family), ape, tol * ape / coef);
        }
    }
    for target in ["ape", "coefficient"] {
        l.near("1", &format!("probit-oneway {target} oracle coverage"), cov(&one, target, "oracle"), 0.953, 0.025);
        l.near("1", &format!("probit-twoway {target} oracle coverage"), cov(&two, target, "oracle"), 0.952, 0.025);
    }
    for (t, rows) in [(&one, &TABLE3_ONEWAY[..]), (&two, &TABLE3_TWOWAY[..])] {
        for &(target, family, _, published) in rows {
            let what = format!("{} {target} {family} coverage", t.design);
            l.near("1", &what, cov(t, target, family), published, 0.025);
        }
    }
    for target in ["ape", "coefficient"] {
        let mut pairs = vec![(&one, "lz-g", "adj-oneway-g")];
        pairs.extend([
            (&two, "lz-g", "adj-oneway-g"),
            (&two, "lz-h", "adj-oneway-h"),
            (&two, "cgm", "adj-cgm"),
            (&two, "cgm2", "adj-cgm2"),
        ]);
        for (t, raw, adj) in pairs {
            let (a, r) = (se(t, target, adj), se(t, target, raw));
            l.holds("1", &format!("{} {target} mean SE {adj} {a:.4} ≤ {raw} {r:.4}", t.design), a <= r);
        }
        let (c, c2) = (se(&two, target, "cgm"), se(&two, target, "cgm2"));
        l.holds("1", &format!("probit-twoway {target} mean SE cgm {c:.4} ≤ cgm2 {c2:.4}"), c <= c2);
    }
}

fn criterion_2(l: &mut Ledger) {
    let d1 = study(DesignName::TwoVar1);
    let d2 = study(DesignName::TwoVar2);
    for t in [&d1, &d2] {
        for target in ["x_g", "x_h"] {
            l.near("2", &format!("{} {target} SD", t.design), sd(t, target), 0.103, 0.006);
            l.near("2", &format!("{} {target} two-way SE", t.design), se(t, target, "cgm"), 0.142, 0.008);
            l.at_least("2", &format!("{} {target} two-way coverage", t.design), cov(t, target, "cgm"), 0.985);
        }
    }
    for (target, cross) in [("x_g", "lz-h"), ("x_h", "lz-g")] {
        l.near("2", &format!("twovar-2 {target} cross-dimension {cross} SE"), se(&d2, target, cross), 0.020, 0.004);
        l.near("2", &format!("twovar-2 {target} cross-dimension {cross} coverage"), cov(&d2, target, cross), 0.30, 0.04);
    }
    for (target, own) in [("x_g", "lz-g"), ("x_h", "lz-h")] {
        l.within("2", &format!("twovar-1 {target} own-dimension {own} coverage"), cov(&d1, target, own), 0.94, 0.955);
    }
}

fn criterion_3(l: &mut Ledger) {
    let d1 = study(DesignName::Tripled1);
    let d2 = study(DesignName::Tripled2);
    l.near("3", "tripled-1 SD", sd(&d1, "tau"), 0.210, 0.012);
    l.near("3", "tripled-1 EHW coverage", cov(&d1, "tau", "ehw"), 0.333, 0.04);
    l.near("3", "tripled-1 adj-cgm2 SE", se(&d1, "tau", "adj-cgm2"), 0.211, 0.012);
    l.near("3", "tripled-1 adj-cgm2 coverage", cov(&d1, "tau", "adj-cgm2"), 0.953, 0.02);
    l.near("3", "tripled-2 adj-oneway-h coverage", cov(&d2, "tau", "adj-oneway-h"), 0.957, 0.02);
    l.at_least("3", "tripled-2 adj-cgm2 coverage", cov(&d2, "tau", "adj-cgm2"), 0.995);
}

fn grid(g: &[usize], h: &[usize]) -> ClusterIndex {
    ClusterIndex::from_ids(g, h).unwrap()
}

fn linear(y0: &[f64], y1: &[f64]) -> PotentialOutcomes {
    PotentialOutcomes {
        model: UnitModel::Linear,
        y0: DVector::from_column_slice(y0),
        y1: DVector::from_column_slice(y1),
        controls: DMatrix::zeros(y0.len(), 0),
    }
}

fn criterion_4(l: &mut Ledger) {
    let toy = grid(&[0, 0, 1, 1], &[0, 1, 0, 1]);
    for (pa, pb) in [(0.5, 0.5), (0.25, 0.75)] {
        let moments = treatment_cross_moments(&toy, ProductRule::new(pa, pb).unwrap()).unwrap();
        let g = toy.labels(Dim::G);
        let h = toy.labels(Dim::H);
        // E[A_g A_g'] = μ² + σ² on a shared cluster, μ² otherwise
        let factor = |p: f64, same: bool| if same { p * p + p * (1.0 - p) } else { p * p };
        let exact = (0..4).all(|i| {
            (0..4).all(|j| moments[(i, j)] == factor(pa, g[i] == g[j]) * factor(pb, h[i] == h[j]))
        });
        l.holds("4a", &format!("E[X_i X_j] on the 2×2 toy with p_A = {pa}, p_B = {pb} equals the closed form exactly"), exact);
    }

    let (rg, rh, ru) = (0.5, 0.75, 0.25);
    let (_, c) = inclusion_moments(&toy, rg, rh, ru).unwrap();
    let expected = rg * (1.0 - rg) * rh * rh * ru * ru;
    l.holds(
        "4b",
        &format!("same-g different-h inclusion covariance {} equals ρg(1−ρg)ρh²ρu² = {expected}", c[(0, 1)]),
        c[(0, 1)] == expected && c[(2, 3)] == expected,
    );

    let layouts: [(&[usize], &[usize]); 2] = [(&[0, 0, 1, 1], &[0, 1, 0, 1]), (&[0, 0, 0, 1, 1, 1, 1], &[0, 1, 1, 0, 0, 0, 1])];
    for (g, h) in layouts {
        let clusters = grid(g, h);
        let n = g.len();
        let y0: Vec<f64> = (0..n).map(|i| (i as f64 * 0.37).sin()).collect();
        let y1: Vec<f64> = (0..n).map(|i| y0[i] + 1.0 + (i as f64 * 1.3).cos()).collect();
        let pop = linear(&y0, &y1);
        for (pa, pb) in [(0.5, 0.5), (0.3, 0.6)] {
            let enumerated = owfe_estimand_enumerated(&pop, &clusters, ProductRule::new(pa, pb).unwrap()).unwrap();
            let w = owfe_weights(&clusters, pa, pb);
            let total: f64 = w.iter().sum();
            let formula: f64 = (0..n).map(|i| w[i] * (y1[i] - y0[i])).sum::<f64>() / total;
            l.holds(
                "4c",
                &format!("OWFE estimand on {n} units, p = ({pa}, {pb}): enumeration {enumerated:.12} vs ω-weights {formula:.12}"),
                (enumerated - formula).abs() < 1e-12,
            );
        }
    }

    let (g, h): (Vec<usize>, Vec<usize>) = (0..8).map(|i| (i / 4, (i / 2) % 2)).unzip();
    let y0: Vec<f64> = (0..8).map(|i| (i as f64 * 0.7).cos()).collect();
    let y1: Vec<f64> = (0..8).map(|i| y0[i] + (i as f64 - 3.0) * 0.4).collect();
    let pop = linear(&y0, &y1);
    for (pa, pb) in [(0.5, 0.5), (0.3, 0.6)] {
        let twfe = twfe_estimand_enumerated(&pop, &grid(&g, &h), ProductRule::new(pa, pb).unwrap()).unwrap();
        let tau = pop.average_effect();
        l.holds(
            "4d",
            &format!("balanced 2×2×2 TWFE estimand {twfe:.12} equals τ_M {tau:.12} (p = ({pa}, {pb}))"),
            (twfe - tau).abs() < 1e-12,
        );
    }

    let (pop, clusters) = counterexample_population(4, 1).unwrap();
    let sum = neighbourhood_effect_sum(&pop, &clusters);
    l.holds("4e", &format!("counterexample neighbourhood sum {sum} equals −1/2"), sum == -0.5);
    let oracle = variance_oracle(&pop, &clusters, ProductRule::new(0.5, 0.5).unwrap()).unwrap();
    let truth = oracle.true_variance().unwrap()[(1, 1)];
    let cgm = oracle.cgm_estimand().unwrap()[(1, 1)];
    let cgm2 = oracle.cgm2_estimand().unwrap()[(1, 1)];
    l.holds(
        "4e",
        &format!("counterexample CGM estimand {cgm:.6} < true variance {truth:.6} < CGM2 estimand {cgm2:.6}"),
        cgm < truth && truth < cgm2,
    );
}

struct Fixture {
    scores: DMatrix<f64>,
    hessian: DMatrix<f64>,
    z: DMatrix<f64>,
    clusters: ClusterIndex,
}

fn fixture(rng: &mut ChaCha8Rng) -> Fixture {
    let n = rng.random_range(6..40);
    let k = rng.random_range(1..4);
    let (ng, nh) = (rng.random_range(1..7), rng.random_range(1..7));
    let b = DMatrix::from_fn(k, k, |_, _| rng.random_range(-1.0..1.0));
    let g: Vec<usize> = (0..n).map(|_| rng.random_range(0..ng)).collect();
    let h: Vec<usize> = (0..n).map(|_| rng.random_range(0..nh)).collect();
    Fixture {
        scores: DMatrix::from_fn(n, k, |_, _| rng.random_range(-5.0..5.0)),
        hessian: &b * b.transpose() + DMatrix::identity(k, k),
        z: DMatrix::from_fn(n, 2, |_, _| rng.random_range(-2.0..2.0)),
        clusters: grid(&g, &h),
    }
}

fn psd(m: &DMatrix<f64>) -> bool {
    min_eigenvalue(m) >= -1e-10 * m.amax().max(1.0)
}

fn close(a: &DMatrix<f64>, b: &DMatrix<f64>, tol: f64) -> bool {
    (a - b).amax() <= tol * a.amax().max(b.amax()).max(1.0)
}

fn criterion_5(l: &mut Ledger) {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let fixtures: Vec<Fixture> = (0..200).map(|_| fixture(&mut rng)).collect();
    let (mut meats, mut order, mut bound, mut collapse, mut perm, mut scale) = (true, true, true, true, true, true);
    for f in &fixtures {
        let c = &f.clusters;
        let n = f.scores.nrows();
        let ehw = meat_ehw(&f.scores).value;
        let mg = meat_cluster(&f.scores, c, Dim::G).value;
        let mh = meat_cluster(&f.scores, c, Dim::H).value;
        let names = vec!["z1".to_string(), "z2".to_string()];
        let meta = PopulationMeta::full(n, c.count(Dim::G), c.count(Dim::H));
        let inputs = AdjustmentInputs::new(f.scores.clone(), &f.z, &names, c, meta, ShrinkOptions::default()).unwrap();
        let dz = delta_z(&inputs).unwrap().value;
        let dzg = delta_z_ce(&inputs, Dim::G).unwrap().value;
        let dzh = delta_z_ce(&inputs, Dim::H).unwrap().value;
        meats &= psd(&ehw) && psd(&(&ehw + &mg)) && psd(&(&ehw + &mh)) && psd(&(&ehw * 2.0 + &mg + &mh));
        meats &= psd(&dz) && psd(&dzg) && psd(&dzh);
        let cgm = v_cgm(&f.scores, &f.hessian, c).unwrap().v;
        let cgm2 = v_cgm2(&f.scores, &f.hessian, c).unwrap().v;
        order &= psd(&(&cgm2 - &cgm));
        bound &= psd(&(&ehw - &dz)) && psd(&(&ehw + &mg - &dzg)) && psd(&(&ehw + &mh - &dzh));

        let g = c.labels(Dim::G);
        let nested = grid(g, g);
        let lz = v_lz_oneway(&f.scores, &f.hessian, &nested, Dim::G).unwrap().v;
        collapse &= close(&v_cgm(&f.scores, &f.hessian, &nested).unwrap().v, &lz, 1e-10);

        let rev: Vec<usize> = (0..n).rev().collect();
        let ps = DMatrix::from_fn(n, f.scores.ncols(), |i, j| f.scores[(rev[i], j)]);
        let pg: Vec<usize> = rev.iter().map(|&i| g[i]).collect();
        let ph: Vec<usize> = rev.iter().map(|&i| c.labels(Dim::H)[i]).collect();
        perm &= close(&v_cgm(&ps, &f.hessian, &grid(&pg, &ph)).unwrap().v, &cgm, 1e-10);
        scale &= close(&v_cgm2(&(&f.scores * 3.0), &f.hessian, c).unwrap().v, &(&cgm2 * 9.0), 1e-10);
    }
    l.holds("5", "EHW, LZ, CGM2 and shrinkage meats are PSD on 200 fixtures", meats);
    l.holds("5", "V_CGM2 − V_CGM is PSD on 200 fixtures", order);
    l.holds("5", "projection meats are bounded by the EHW and LZ meats", bound);
    l.holds("5", "CGM equals LZ when the partitions coincide (1e-10)", collapse);
    l.holds("5", "variances are invariant to row permutation", perm);
    l.holds("5", "scaling scores by c scales variances by c²", scale);

    let mut fd = true;
    for _ in 0..200 {
        let d = DVector::from_fn(3, |_, _| rng.random_range(-1.5..1.5));
        let theta = DVector::from_fn(3, |_, _| rng.random_range(-1.0..1.0));
        let y = f64::from(u8::from(rng.random_bool(0.5)));
        let phi = |x: f64| 0.5 * statrs::function::erf::erfc(-x / std::f64::consts::SQRT_2);
        let q = |t: &DVector<f64>| -(y * phi(d.dot(t)).ln() + (1.0 - y) * phi(-d.dot(t)).ln());
        let (score, hess) = probit_unit(&d, y, &theta);
        for j in 0..3 {
            let e = DVector::from_fn(3, |i, _| if i == j { 1e-5 } else { 0.0 });
            let (up, down) = (&theta + &e, &theta - &e);
            fd &= ((q(&up) - q(&down)) / 2e-5 - score[j]).abs() < 1e-6;
            let col = (probit_unit(&d, y, &up).0 - probit_unit(&d, y, &down).0) / 2e-5;
            fd &= (0..3).all(|i| (col[i] - hess[(i, j)]).abs() < 1e-4);
        }
    }
    l.holds("5", "probit score and Hessian match finite differences (1e-6 / 1e-4)", fd);

    let mut dim = true;
    for _ in 0..200 {
        let n = rng.random_range(4..60);
        let y = DVector::from_fn(n, |_, _| rng.random_range(-10.0..10.0));
        let x = DVector::from_fn(n, |i, _| if i < 2 { i as f64 } else { f64::from(u8::from(rng.random_bool(0.5))) });
        let mut d = DMatrix::from_element(n, 2, 1.0);
        d.set_column(1, &x);
        let fit = fit_ols_matrix(&d, &y, vec!["c".into(), "x".into()]).unwrap();
        let mean = |t: f64| {
            let v: Vec<f64> = (0..n).filter(|&i| x[i] == t).map(|i| y[i]).collect();
            v.iter().sum::<f64>() / v.len() as f64
        };
        dim &= (fit.theta_hat[1] - (mean(1.0) - mean(0.0))).abs() < 1e-12;
    }
    l.holds("5", "OLS on a binary treatment equals the difference in means (1e-12)", dim);

    let mut twfe = true;
    for _ in 0..50 {
        let (ng, nh, k) = (rng.random_range(2..6), rng.random_range(2..6), rng.random_range(1..3));
        let (g, h): (Vec<usize>, Vec<usize>) = (0..ng * nh * k).map(|i| (i / (nh * k), (i / k) % nh)).unzip();
        let x = DVector::from_fn(g.len(), |_, _| rng.random_range(-3.0..3.0));
        let r = twfe_residualize(&x, &grid(&g, &h));
        let mut d = DMatrix::zeros(g.len(), ng + nh);
        for i in 0..g.len() {
            d[(i, g[i])] = 1.0;
            d[(i, ng + h[i])] = 1.0;
        }
        let eig = (d.transpose() * &d).symmetric_eigen();
        let inv = eig.eigenvalues.map(|v| if v > 1e-9 { 1.0 / v } else { 0.0 });
        let pinv = &eig.eigenvectors * DMatrix::from_diagonal(&inv) * eig.eigenvectors.transpose();
        let reference = &x - &d * (pinv * (d.transpose() * &x));
        twfe &= r.closed_form && (&r.values - reference).amax() < 1e-10;
    }
    l.holds("5", "balanced TWFE closed form equals the dummy projection (1e-10)", twfe);

    let spec = PopulationSpec {
        g: 10,
        h: 10,
        units_per_cell: 2,
        ..PopulationSpec::paper(DesignName::ProbitTwoWay, SEED)
    };
    let mut config = StudyConfig::new(spec, 50);
    config.workers = Some(1);
    let a = run_study(&config).unwrap().to_csv().unwrap();
    config.workers = Some(4);
    let b = run_study(&config).unwrap().to_csv().unwrap();
    l.holds("5", "same seed gives byte-identical study output across worker counts", a == b);
}

#[test]
fn acceptance_criteria() {
    let mut tables = Ledger::default();
    criterion_1(&mut tables);
    criterion_2(&mut tables);
    criterion_3(&mut tables);
    let mut exact = Ledger::default();
    criterion_4(&mut exact);
    criterion_5(&mut exact);
    let _ = writeln!(
        std::io::stdout().lock(),
        "acceptance: table checks {}/{} passed, oracle and property checks {}/{} passed",
        tables.passed,
        tables.passed + tables.failed.len(),
        exact.passed,
        exact.passed + exact.failed.len()
    );
    assert!(exact.failed.is_empty(), "exact checks failed:\n{}", exact.failed.join("\n"));
}
