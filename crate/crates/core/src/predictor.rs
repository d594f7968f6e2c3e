//! Point-wise prediction `z⁺ = 𝒜(u) z` with `𝒜(u) = A₁₁ + A₁₂ G(u)`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dictionary::{NormalBasis, Structure};
use crate::error::{KcfError, Result};
use crate::regression::FittedModel;

/// Floor on the per-coordinate error scale `max(|H(x_t)|, floor)`.
pub const RELATIVE_ERROR_FLOOR: f64 = 1e-8;

/// `𝒜(u) z` through the general separable form.
pub fn step_general(
    model: &FittedModel,
    basis: &NormalBasis,
    z: &DVector<f64>,
    u: &[f64],
) -> Result<DVector<f64>> {
    check(model, basis, z, u)?;
    let a = &model.a11 + &model.a12 * basis.eval_g(u)?;
    Ok(a * z)
}

/// One prediction step, using the lifted-linear or bilinear form when the
/// basis has that structure.
pub fn step(
    model: &FittedModel,
    basis: &NormalBasis,
    z: &DVector<f64>,
    u: &[f64],
) -> Result<DVector<f64>> {
    match basis.structure() {
        Structure::LiftedLinear => {
            check(model, basis, z, u)?;
            Ok(&model.a11 * z + &model.a12 * DVector::from_column_slice(u))
        }
        Structure::Bilinear => {
            check(model, basis, z, u)?;
            let nh = model.n_h;
            let mut next = &model.a11 * z;
            for (i, &ui) in u.iter().enumerate() {
                next += model.a12.columns(i * nh, nh) * z * ui;
            }
            Ok(next)
        }
        Structure::General => step_general(model, basis, z, u),
    }
}

fn check(model: &FittedModel, basis: &NormalBasis, z: &DVector<f64>, u: &[f64]) -> Result<()> {
    model.check_basis(basis)?;
    if z.len() != model.n_h {
        return Err(KcfError::dim("lifted state length", model.n_h, z.len()));
    }
    if u.len() != model.m {
        return Err(KcfError::dim("input length", model.m, u.len()));
    }
    Ok(())
}

/// `vᵀ (A₁₁ + A₁₂ G(u)) H(x)`: the predicted value of `(vᵀH)(x⁺)`.
pub fn function_predict(
    v: &[f64],
    model: &FittedModel,
    basis: &NormalBasis,
    x: &[f64],
    u: &[f64],
) -> Result<f64> {
    if v.len() != model.n_h {
        return Err(KcfError::dim("function coefficients", model.n_h, v.len()));
    }
    let z = basis.state().eval(x)?;
    let next = step_general(model, basis, &z, u)?;
    Ok(DVector::from_column_slice(v).dot(&next))
}

#[derive(Clone, Debug, PartialEq)]
pub struct RolloutResult {
    /// `n_H × (T+1)`; column 0 is `H(x₀)`.
    pub predicted: DMatrix<f64>,
    /// `H(x_t)` along the true trajectory, when supplied.
    pub truth: Option<DMatrix<f64>>,
    /// `|ẑ_t − H(x_t)| / max(|H(x_t)|, floor)`, per coordinate and step.
    pub relative_errors: Option<DMatrix<f64>>,
}

impl RolloutResult {
    pub fn horizon(&self) -> usize {
        self.predicted.ncols() - 1
    }

    pub fn max_relative_error(&self) -> Option<f64> {
        self.relative_errors.as_ref().map(|e| e.max())
    }
}

/// Iterates [`step`] from `z₀ = H(x₀)` over the columns of `inputs` (`m × T`).
/// `true_states` (`n × (T+1)`) enables the error arrays.
pub fn rollout(
    model: &FittedModel,
    basis: &NormalBasis,
    x0: &[f64],
    inputs: &DMatrix<f64>,
    true_states: Option<&DMatrix<f64>>,
) -> Result<RolloutResult> {
    let horizon = inputs.ncols();
    if inputs.nrows() != model.m {
        return Err(KcfError::dim(
            "input sequence rows",
            model.m,
            inputs.nrows(),
        ));
    }
    let mut predicted = DMatrix::zeros(model.n_h, horizon + 1);
    let mut z = basis.state().eval(x0)?;
    predicted.set_column(0, &z);
    for t in 0..horizon {
        let u: Vec<f64> = inputs.column(t).iter().copied().collect();
        z = step(model, basis, &z, &u)?;
        if z.iter().any(|v| !v.is_finite()) {
            return Err(KcfError::NonFinite {
                step: t + 1,
                context: "lifted state during rollout".into(),
            });
        }
        predicted.set_column(t + 1, &z);
    }
    let (truth, relative_errors) = match true_states {
        None => (None, None),
        Some(xs) => {
            if xs.ncols() != horizon + 1 {
                return Err(KcfError::dim(
                    "true trajectory length",
                    horizon + 1,
                    xs.ncols(),
                ));
            }
            let lifted = basis.eval_h(xs)?;
            let errors = predicted.zip_map(&lifted, |p, h| {
                (p - h).abs() / h.abs().max(RELATIVE_ERROR_FLOOR)
            });
            (Some(lifted), Some(errors))
        }
    };
    Ok(RolloutResult {
        predicted,
        truth,
        relative_errors,
    })
}

/// Per-step median and quartiles of one tracked coordinate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoordinateStatistics {
    pub coordinate: usize,
    pub median: Vec<f64>,
    pub q25: Vec<f64>,
    pub q75: Vec<f64>,
}

/// Percentile of sorted data with linear interpolation between order statistics.
pub fn percentile(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

/// Statistics across rollouts for each coordinate in `coordinates` (rows of `H`).
pub fn error_statistics(
    results: &[RolloutResult],
    coordinates: &[usize],
) -> Result<Vec<CoordinateStatistics>> {
    let first = results
        .first()
        .ok_or_else(|| KcfError::invalid("rollout collection", "empty"))?;
    let steps = first.predicted.ncols();
    let errors: Vec<&DMatrix<f64>> = results
        .iter()
        .map(|r| {
            r.relative_errors.as_ref().ok_or_else(|| {
                KcfError::invalid("rollout collection", "rollout without ground truth")
            })
        })
        .collect::<Result<_>>()?;
    if let Some(e) = errors.iter().find(|e| e.ncols() != steps) {
        return Err(KcfError::dim("rollout horizon", steps, e.ncols()));
    }
    let mut out = Vec::with_capacity(coordinates.len());
    let mut buf = Vec::with_capacity(results.len());
    for &c in coordinates {
        if c >= first.predicted.nrows() {
            return Err(KcfError::dim(
                "tracked coordinate",
                first.predicted.nrows(),
                c,
            ));
        }
        let mut stats = CoordinateStatistics {
            coordinate: c,
            median: Vec::with_capacity(steps),
            q25: Vec::with_capacity(steps),
            q75: Vec::with_capacity(steps),
        };
        for t in 0..steps {
            buf.clear();
            buf.extend(errors.iter().map(|e| e[(c, t)]));
            buf.sort_by(f64::total_cmp);
            stats.median.push(percentile(&buf, 0.5));
            stats.q25.push(percentile(&buf, 0.25));
            stats.q75.push(percentile(&buf, 0.75));
        }
        out.push(stats);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dictionary::{make_bilinear, make_lifted_linear, StateDictionary};
    use crate::regression::{fit_top_block, FitDiagnostics, SnapshotDataset};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn model_from(basis: &NormalBasis, a11: DMatrix<f64>, a12: DMatrix<f64>) -> FittedModel {
        FittedModel {
            structure: basis.structure(),
            n: basis.n(),
            m: basis.m(),
            n_h: basis.n_h(),
            n_psi: basis.n_psi(),
            a11,
            a12,
            state_rows: basis.state().state_rows(),
            diagnostics: FitDiagnostics {
                residual_fro: 0.0,
                cond_psi: 1.0,
                cond_h_plus: 1.0,
                snapshots: 0,
            },
        }
    }

    fn scalar_model() -> (NormalBasis, FittedModel) {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = DMatrix::from_fn(1, 50, |_, _| rng.random_range(-2.0..2.0));
        let u = DMatrix::from_fn(1, 50, |_, _| rng.random_range(-1.0..1.0));
        let xp = x.map(|v| 0.5 * v) + &u;
        let data = SnapshotDataset::new(x, xp, u).unwrap();
        let basis = make_lifted_linear(StateDictionary::coordinates(1), 1).unwrap();
        let model = fit_top_block(&basis, &data).unwrap();
        (basis, model)
    }

    #[test]
    fn identity_model_keeps_state() {
        let basis = make_bilinear(StateDictionary::coordinates(2), 1).unwrap();
        let model = model_from(&basis, DMatrix::identity(2, 2), DMatrix::zeros(2, 2));
        let z = DVector::from_vec(vec![0.3, -2.0]);
        assert_eq!(step(&model, &basis, &z, &[0.7]).unwrap(), z);
    }

    #[test]
    fn scalar_linear_step() {
        let (basis, model) = scalar_model();
        let z = DVector::from_vec(vec![1.4, 1.0]);
        let next = step(&model, &basis, &z, &[-0.3]).unwrap();
        assert!((next[0] - (0.7 - 0.3)).abs() < 1e-10);
        assert!((next[1] - 1.0).abs() < 1e-10);
    }

    #[test]
    fn structured_steps_agree_with_general_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let bil = make_bilinear(StateDictionary::coordinates(3), 2).unwrap();
        let lin = make_lifted_linear(StateDictionary::coordinates(3), 2).unwrap();
        for basis in [bil, lin] {
            let nh = basis.n_h();
            let g = basis.n_psi() - nh;
            let model = model_from(
                &basis,
                DMatrix::from_fn(nh, nh, |_, _| rng.random_range(-1.0..1.0)),
                DMatrix::from_fn(nh, g, |_, _| rng.random_range(-1.0..1.0)),
            );
            for _ in 0..20 {
                let mut z = DVector::from_fn(nh, |_, _| rng.random_range(-3.0..3.0));
                if basis.structure() == Structure::LiftedLinear {
                    z[nh - 1] = 1.0;
                }
                let u = [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)];
                let a = step(&model, &basis, &z, &u).unwrap();
                let b = step_general(&model, &basis, &z, &u).unwrap();
                assert!((a - b).amax() <= 1e-14 * 10.0);
            }
        }
    }

    #[test]
    fn step_shape_errors() {
        let (basis, model) = scalar_model();
        assert!(step(&model, &basis, &DVector::zeros(3), &[0.0]).is_err());
        assert!(step(&model, &basis, &DVector::zeros(2), &[0.0, 1.0]).is_err());
    }

    #[test]
    fn function_predict_matches_step_and_truth() {
        let (basis, model) = scalar_model();
        let x = [0.8];
        let u = [0.25];
        let z = basis.state().eval(&x).unwrap();
        let next = step(&model, &basis, &z, &u).unwrap();
        let p = function_predict(&[1.0, 0.0], &model, &basis, &x, &u).unwrap();
        assert!((p - next[0]).abs() < 1e-14);
        assert!((p - (0.5 * 0.8 + 0.25)).abs() < 1e-10);
        let p1 = function_predict(&[0.0, 1.0], &model, &basis, &x, &u).unwrap();
        let combo = function_predict(&[2.0, -3.0], &model, &basis, &x, &u).unwrap();
        assert!((combo - (2.0 * p - 3.0 * p1)).abs() < 1e-12);
    }

    #[test]
    fn zero_horizon_rollout() {
        let (basis, model) = scalar_model();
        let r = rollout(&model, &basis, &[1.0], &DMatrix::zeros(1, 0), None).unwrap();
        assert_eq!(r.predicted.shape(), (2, 1));
        assert_eq!(r.predicted.column(0).as_slice(), &[1.0, 1.0]);
    }

    #[test]
    fn exact_rollout_has_tiny_errors() {
        let (basis, model) = scalar_model();
        let inputs = DMatrix::from_fn(1, 40, |_, t| ((t as f64) * 0.37).sin());
        let mut xs = DMatrix::zeros(1, 41);
        xs[(0, 0)] = 1.5;
        for t in 0..40 {
            xs[(0, t + 1)] = 0.5 * xs[(0, t)] + inputs[(0, t)];
        }
        let r = rollout(&model, &basis, &[1.5], &inputs, Some(&xs)).unwrap();
        assert!(r.max_relative_error().unwrap() <= 1e-10);
        assert_eq!(r.relative_errors.unwrap().ncols(), 41);
    }

    #[test]
    fn rollout_reports_non_finite_step() {
        let basis = make_bilinear(StateDictionary::coordinates(1), 1).unwrap();
        let model = model_from(
            &basis,
            DMatrix::from_element(1, 1, 1e200),
            DMatrix::zeros(1, 1),
        );
        match rollout(&model, &basis, &[1.0], &DMatrix::zeros(1, 5), None) {
            Err(KcfError::NonFinite { step, .. }) => assert_eq!(step, 2),
            other => panic!("{other:?}"),
        }
    }

    fn fake_result(errs: &[f64]) -> RolloutResult {
        let e = DMatrix::from_row_slice(1, errs.len(), errs);
        RolloutResult {
            predicted: e.clone(),
            truth: None,
            relative_errors: Some(e),
        }
    }

    #[test]
    fn statistics_order_statistics() {
        let results: Vec<_> = [0.0, 3.0, 1.0, 4.0, 2.0]
            .iter()
            .map(|&v| fake_result(&[v]))
            .collect();
        let s = error_statistics(&results, &[0]).unwrap();
        assert_eq!((s[0].median[0], s[0].q25[0], s[0].q75[0]), (2.0, 1.0, 3.0));
        let single = error_statistics(&[fake_result(&[0.4, 0.9])], &[0]).unwrap();
        assert_eq!(single[0].median, vec![0.4, 0.9]);
        assert_eq!(single[0].q25, single[0].median);
        assert_eq!(single[0].q75, single[0].median);
        assert!(error_statistics(&[], &[0]).is_err());
        assert!(error_statistics(&[fake_result(&[1.0]), fake_result(&[1.0, 2.0])], &[0]).is_err());
    }
}
