use bergman_core::asymptotics::fit_expansion;
use bergman_core::bergman::KernelData;
use bergman_core::cli::{RunConfig, Subcommand};
use bergman_core::geometry::{Chart, ChartPoint, KaehlerModel};
use bergman_core::model::{
    b1, j2u_closed, model_bergman, model_heat_kernel, CurvatureScalars, ModelSpectrum,
};
use bergman_core::sections::basis_for;
use num_complex::Complex64;
use proptest::prelude::*;
use std::f64::consts::PI;
use std::sync::OnceLock;

fn chart_point() -> impl Strategy<Value = ChartPoint> {
    (0.0f64..1.0, 0.0f64..(2.0 * PI), any::<bool>()).prop_map(|(r, a, inv)| ChartPoint {
        chart: if inv { Chart::Inverted } else { Chart::Affine },
        coord: Complex64::from_polar(r, a),
    })
}

fn perturbed_kernel() -> &'static KernelData {
    static KD: OnceLock<KernelData> = OnceLock::new();
    KD.get_or_init(|| {
        let m = KaehlerModel::perturbed(0.25, 1).unwrap();
        KernelData::new(basis_for(&m, 24).unwrap()).unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn fubini_study_density_is_constant(p in 1u32..40, m in 0u32..4, x in chart_point()) {
        let kd = KernelData::new(basis_for(&KaehlerModel::fubini_study(m), p).unwrap()).unwrap();
        let b = kd.diagonal(x).unwrap();
        prop_assert!((b / (p + m + 1) as f64 - 1.0).abs() < 1e-10);
    }

    #[test]
    fn density_is_chart_independent(x in chart_point()) {
        let kd = perturbed_kernel();
        let y = x.switch().unwrap();
        let a = kd.diagonal(x).unwrap();
        let b = kd.diagonal(y).unwrap();
        prop_assert!((a - b).abs() <= 1e-10 * a);
        prop_assert_eq!(y.switch().unwrap().chart, x.chart);
    }

    #[test]
    fn kernel_magnitude_is_chart_independent(x in chart_point(), y in chart_point()) {
        let kd = perturbed_kernel();
        let a = kd.offdiag(x, y).unwrap().norm();
        let b = kd.offdiag(x.switch().unwrap(), y).unwrap().norm();
        prop_assert!((a - b).abs() <= 1e-10 * kd.diagonal(x).unwrap());
    }

    #[test]
    fn cauchy_schwarz(x in chart_point(), y in chart_point()) {
        let kd = perturbed_kernel();
        let v = kd.offdiag(x, y).unwrap().norm_sqr();
        prop_assert!(v <= kd.diagonal(x).unwrap() * kd.diagonal(y).unwrap() * (1.0 + 1e-12));
    }

    #[test]
    fn model_kernel_magnitude(x in -2.0f64..2.0, y in -2.0f64..2.0, xp in -2.0f64..2.0, yp in -2.0f64..2.0) {
        let spec = ModelSpectrum::kaehler(1);
        let p = model_bergman(&[x, y], &[xp, yp], &spec).unwrap();
        let d2 = (x - xp).powi(2) + (y - yp).powi(2);
        prop_assert!((p.norm() - (-PI * d2 / 2.0).exp()).abs() < 1e-13);
        let q = model_bergman(&[xp, yp], &[x, y], &spec).unwrap();
        prop_assert!((p - q.conj()).norm() < 1e-13);
    }

    #[test]
    fn heat_kernel_is_hermitian(x in -2.0f64..2.0, y in -2.0f64..2.0, xp in -2.0f64..2.0, yp in -2.0f64..2.0, u in 0.05f64..5.0) {
        let spec = ModelSpectrum::kaehler(1);
        let a = model_heat_kernel(&[x, y], &[xp, yp], u, &spec).unwrap();
        let b = model_heat_kernel(&[xp, yp], &[x, y], u, &spec).unwrap();
        prop_assert!((a - b.conj()).norm() <= 1e-13 * a.norm().max(1e-300));
    }

    #[test]
    fn j2u_is_linear_in_curvature(u in 0.0001f64..6.0, rx in -30.0f64..30.0, re in -30.0f64..30.0) {
        let both = j2u_closed(u, &CurvatureScalars::new(rx, re)).unwrap();
        let sep = j2u_closed(u, &CurvatureScalars::new(rx, 0.0)).unwrap()
            + j2u_closed(u, &CurvatureScalars::new(0.0, re)).unwrap();
        prop_assert!((both - sep).abs() <= 1e-12 * (rx.abs() + re.abs()).max(1.0));
        let lim = b1(&CurvatureScalars::new(rx, re));
        prop_assert!((lim - (re + rx / 2.0) / (4.0 * PI)).abs() < 1e-14 * (rx.abs() + re.abs()).max(1.0));
    }

    #[test]
    fn fit_recovers_polynomials(c in prop::collection::vec(-3.0f64..3.0, 4)) {
        let ps = [8u32, 12, 16, 24, 32, 48, 64, 96, 128];
        let samples: Vec<(u32, f64)> = ps
            .iter()
            .map(|&p| {
                let x = 1.0 / p as f64;
                let y = c[0] + c[1] * x + c[2] * x * x + c[3] * x * x * x;
                (p, p as f64 * y)
            })
            .collect();
        let fit = fit_expansion(&samples, 1, 3).unwrap();
        for (r, &want) in c.iter().enumerate() {
            prop_assert!((fit.coefficient(r) - want).abs() < 1e-6 * 10f64.powi(r as i32), "{r}");
        }
        prop_assert!(fit.parity.as_ref().unwrap().passes);
    }

    #[test]
    fn config_tolerances_must_be_positive(t in -1.0f64..1.0) {
        let r = RunConfig::parse(Subcommand::Diag, &format!("tol_b1 = {t}"));
        prop_assert_eq!(r.is_ok(), t > 0.0);
    }

    #[test]
    fn config_p_ranges_roundtrip(ps in prop::collection::btree_set(1u32..500, 5..9)) {
        let list: Vec<u32> = ps.into_iter().collect();
        let text = format!("p = {}", list.iter().map(|p| p.to_string()).collect::<Vec<_>>().join(", "));
        let cfg = RunConfig::parse(Subcommand::Diag, &text).unwrap();
        prop_assert_eq!(cfg.p, list);
    }
}
