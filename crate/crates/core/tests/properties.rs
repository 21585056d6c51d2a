//! Randomized invariants of the meats, sandwiches and estimators.

use fpcr::data::{ClusterIndex, Dim, PopulationMeta};
use fpcr::dgp::{DesignName, PopulationSpec};
use fpcr::linalg::min_eigenvalue;
use fpcr::mestimation::{fit_diff_in_means, fit_ols_matrix, probit_unit, twfe_residualize};
use fpcr::montecarlo::{run_study, StudyConfig};
use fpcr::shrinkage::{delta_z, delta_z_ce, delta_z_dim, AdjustmentInputs, ShrinkOptions};
use fpcr::variance::{meat_cluster, meat_ehw, v_cgm, v_cgm2, v_ehw, v_lz_oneway, VarianceReport};
use nalgebra::{DMatrix, DVector};
use proptest::collection::vec;
use proptest::prelude::*;
use statrs::function::erf::erfc;

#[derive(Debug, Clone)]
struct Fixture {
    scores: DMatrix<f64>,
    hessian: DMatrix<f64>,
    z: DMatrix<f64>,
    g: Vec<usize>,
    h: Vec<usize>,
}

impl Fixture {
    fn clusters(&self) -> ClusterIndex {
        ClusterIndex::from_ids(&self.g, &self.h).unwrap()
    }

    fn inputs(&self) -> AdjustmentInputs {
        let c = self.clusters();
        let n = self.scores.nrows();
        let names: Vec<String> = (0..self.z.ncols()).map(|j| format!("z{j}")).collect();
        let meta = PopulationMeta::full(n, c.count(Dim::G), c.count(Dim::H));
        AdjustmentInputs::new(self.scores.clone(), &self.z, &names, &c, meta, ShrinkOptions::default()).unwrap()
    }
}

fn fixture() -> impl Strategy<Value = Fixture> {
    (6usize..40, 1usize..4, 1usize..7, 1usize..7).prop_flat_map(|(n, k, ng, nh)| {
        (
            vec(-5.0..5.0f64, n * k),
            vec(-1.0..1.0f64, k * k),
            vec(-2.0..2.0f64, n * 2),
            vec(0..ng, n),
            vec(0..nh, n),
        )
            .prop_map(move |(s, b, z, g, h)| {
                let b = DMatrix::from_row_slice(k, k, &b);
                Fixture {
                    scores: DMatrix::from_row_slice(n, k, &s),
                    hessian: &b * b.transpose() + DMatrix::identity(k, k),
                    z: DMatrix::from_row_slice(n, 2, &z),
                    g,
                    h,
                }
            })
    })
}

/// Eigenvalue floor scaled to the matrix magnitude.
fn psd(m: &DMatrix<f64>) -> bool {
    min_eigenvalue(m) >= -1e-10 * m.amax().max(1.0)
}

fn close(a: &DMatrix<f64>, b: &DMatrix<f64>, tol: f64) -> bool {
    (a - b).amax() <= tol * a.amax().max(b.amax()).max(1.0)
}

fn variances(f: &Fixture, c: &ClusterIndex) -> Vec<VarianceReport> {
    vec![
        v_ehw(&f.scores, &f.hessian, c).unwrap(),
        v_lz_oneway(&f.scores, &f.hessian, c, Dim::G).unwrap(),
        v_lz_oneway(&f.scores, &f.hessian, c, Dim::H).unwrap(),
        v_cgm(&f.scores, &f.hessian, c).unwrap(),
        v_cgm2(&f.scores, &f.hessian, c).unwrap(),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn meats_are_psd(f in fixture()) {
        let c = f.clusters();
        let ehw = meat_ehw(&f.scores).value;
        let g = meat_cluster(&f.scores, &c, Dim::G).value;
        let h = meat_cluster(&f.scores, &c, Dim::H).value;
        prop_assert!(psd(&ehw));
        prop_assert!(psd(&(&ehw + &g)));
        prop_assert!(psd(&(&ehw + &h)));
        prop_assert!(psd(&(&ehw * 2.0 + &g + &h)));
        let inputs = f.inputs();
        let m = f.scores.nrows() as f64;
        prop_assert!(psd(&delta_z(&inputs).unwrap().value));
        for dim in [Dim::G, Dim::H] {
            prop_assert!(psd(&delta_z_ce(&inputs, dim).unwrap().value));
            prop_assert!(psd(&delta_z_dim(&inputs, dim, m).unwrap().value));
        }
    }

    #[test]
    fn cgm2_dominates_cgm(f in fixture()) {
        let c = f.clusters();
        let cgm = v_cgm(&f.scores, &f.hessian, &c).unwrap();
        let cgm2 = v_cgm2(&f.scores, &f.hessian, &c).unwrap();
        prop_assert!(psd(&(&cgm2.v - &cgm.v)));
    }

    #[test]
    fn projections_are_bounded(f in fixture()) {
        let c = f.clusters();
        let inputs = f.inputs();
        let ehw = meat_ehw(&f.scores).value;
        prop_assert!(psd(&(&ehw - delta_z(&inputs).unwrap().value)));
        for dim in [Dim::G, Dim::H] {
            let lz = &ehw + meat_cluster(&f.scores, &c, dim).value;
            prop_assert!(psd(&(lz - delta_z_ce(&inputs, dim).unwrap().value)));
        }
    }

    #[test]
    fn cgm_collapses_to_lz_on_nested_partitions(f in fixture()) {
        let c = ClusterIndex::from_ids(&f.g, &f.g).unwrap();
        let cgm = v_cgm(&f.scores, &f.hessian, &c).unwrap();
        let lz = v_lz_oneway(&f.scores, &f.hessian, &c, Dim::G).unwrap();
        prop_assert!(close(&cgm.v, &lz.v, 1e-10));
    }

    #[test]
    fn row_permutation_leaves_variances_unchanged(f in fixture(), seed in any::<u64>()) {
        let n = f.scores.nrows();
        let mut order: Vec<usize> = (0..n).collect();
        let mut state = seed | 1;
        for i in (1..n).rev() {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            order.swap(i, (state % (i as u64 + 1)) as usize);
        }
        let permuted = Fixture {
            scores: DMatrix::from_fn(n, f.scores.ncols(), |i, j| f.scores[(order[i], j)]),
            g: order.iter().map(|&i| f.g[i]).collect(),
            h: order.iter().map(|&i| f.h[i]).collect(),
            ..f.clone()
        };
        for (a, b) in variances(&f, &f.clusters()).iter().zip(variances(&permuted, &permuted.clusters())) {
            prop_assert!(close(&a.v, &b.v, 1e-10));
        }
    }

    #[test]
    fn score_scaling_scales_variances(f in fixture(), scale in 0.1..10.0f64) {
        let scaled = Fixture { scores: &f.scores * scale, ..f.clone() };
        let c = f.clusters();
        for (a, b) in variances(&f, &c).iter().zip(variances(&scaled, &c)) {
            prop_assert!(close(&(&a.v * (scale * scale)), &b.v, 1e-10));
        }
    }

    #[test]
    fn probit_unit_matches_finite_differences(
        d in vec(-1.5..1.5f64, 3),
        theta in vec(-1.0..1.0f64, 3),
        y in any::<bool>(),
    ) {
        let d = DVector::from_vec(d);
        let theta = DVector::from_vec(theta);
        let y = f64::from(u8::from(y));
        let phi = |x: f64| 0.5 * erfc(-x / std::f64::consts::SQRT_2);
        let q = |t: &DVector<f64>| {
            let eta = d.dot(t);
            -(y * phi(eta).ln() + (1.0 - y) * phi(-eta).ln())
        };
        let (score, hess) = probit_unit(&d, y, &theta);
        let step = 1e-5;
        for j in 0..3 {
            let mut up = theta.clone();
            let mut down = theta.clone();
            up[j] += step;
            down[j] -= step;
            let fd = (q(&up) - q(&down)) / (2.0 * step);
            prop_assert!((fd - score[j]).abs() < 1e-6, "score {j}: {fd} vs {}", score[j]);
            let col = (probit_unit(&d, y, &up).0 - probit_unit(&d, y, &down).0) / (2.0 * step);
            for i in 0..3 {
                prop_assert!((col[i] - hess[(i, j)]).abs() < 1e-4);
            }
        }
    }

    #[test]
    fn ols_on_binary_treatment_is_a_difference_in_means(
        y in vec(-10.0..10.0f64, 4..60),
        bits in vec(any::<bool>(), 60),
    ) {
        let n = y.len();
        let mut x: Vec<f64> = bits[..n].iter().map(|&b| f64::from(u8::from(b))).collect();
        x[0] = 0.0;
        x[1] = 1.0;
        let mean = |t: f64| {
            let v: Vec<f64> = (0..n).filter(|&i| x[i] == t).map(|i| y[i]).collect();
            v.iter().sum::<f64>() / v.len() as f64
        };
        let expected = mean(1.0) - mean(0.0);
        let yv = DVector::from_vec(y.clone());
        let xv = DVector::from_vec(x.clone());
        let mut d = DMatrix::from_element(n, 2, 1.0);
        d.set_column(1, &xv);
        let ols = fit_ols_matrix(&d, &yv, vec!["c".into(), "x".into()]).unwrap();
        prop_assert!((ols.theta_hat[1] - expected).abs() < 1e-12);
        let dim = fit_diff_in_means(&yv, &xv).unwrap();
        prop_assert!((dim.theta_hat[1] - expected).abs() < 1e-12);
    }

    #[test]
    fn twfe_matches_dummy_regression(
        ng in 2usize..6,
        nh in 2usize..6,
        k in 1usize..3,
        values in vec(-3.0..3.0f64, 72),
        keep in vec(0.0..1.0f64, 72),
    ) {
        let mut g = Vec::new();
        let mut h = Vec::new();
        for a in 0..ng {
            for b in 0..nh {
                for _ in 0..k {
                    g.push(a);
                    h.push(b);
                }
            }
        }
        let n = g.len();
        let x = DVector::from_fn(n, |i, _| values[i]);
        let balanced = twfe_residualize(&x, &ClusterIndex::from_ids(&g, &h).unwrap());
        prop_assert!(balanced.closed_form);
        let dummies = dummy_residuals(&x, &g, &h);
        prop_assert!((&balanced.values - &dummies).amax() < 1e-10);

        // dropping rows breaks balance; alternating projections must agree
        let rows: Vec<usize> = (0..n).filter(|&i| i < 2 || keep[i] < 0.8).collect();
        let gs: Vec<usize> = rows.iter().map(|&i| g[i]).collect();
        let hs: Vec<usize> = rows.iter().map(|&i| h[i]).collect();
        let xs = DVector::from_fn(rows.len(), |r, _| x[rows[r]]);
        let un = twfe_residualize(&xs, &ClusterIndex::from_ids(&gs, &hs).unwrap());
        let reference = dummy_residuals(&xs, &gs, &hs);
        prop_assert!((&un.values - &reference).amax() < 1e-8);
    }
}

/// Residuals of `x` on G and H dummies, through a pseudo-inverse of the
/// normal equations.
fn dummy_residuals(x: &DVector<f64>, g: &[usize], h: &[usize]) -> DVector<f64> {
    let n = x.len();
    let ng = g.iter().max().unwrap() + 1;
    let nh = h.iter().max().unwrap() + 1;
    let mut d = DMatrix::zeros(n, ng + nh);
    for i in 0..n {
        d[(i, g[i])] = 1.0;
        d[(i, ng + h[i])] = 1.0;
    }
    let eig = (d.transpose() * &d).symmetric_eigen();
    let inv = eig.eigenvalues.map(|l| if l > 1e-9 { 1.0 / l } else { 0.0 });
    let pinv = &eig.eigenvectors * DMatrix::from_diagonal(&inv) * eig.eigenvectors.transpose();
    x - &d * (pinv * (d.transpose() * x))
}

#[test]
fn studies_are_deterministic() {
    let spec = PopulationSpec {
        g: 10,
        h: 10,
        units_per_cell: 2,
        ..PopulationSpec::paper(DesignName::ProbitTwoWay, 21)
    };
    let mut config = StudyConfig::new(spec, 40);
    config.workers = Some(1);
    let a = run_study(&config).unwrap();
    config.workers = Some(3);
    let b = run_study(&config).unwrap();
    assert_eq!(a.to_csv().unwrap().as_bytes(), b.to_csv().unwrap().as_bytes());
    assert_eq!(a.to_json().unwrap(), run_study(&config).unwrap().to_json().unwrap());
}
