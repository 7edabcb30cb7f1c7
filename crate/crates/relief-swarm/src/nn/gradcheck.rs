//! Central finite-difference verification of analytic gradients.

use rand::Rng;

use super::{Gradients, NnError, ParameterSet};

/// Probes `count` random parameter coordinates and returns the largest
/// relative discrepancy between `analytic` and a central finite difference
/// of `f`. Parameters are restored after each probe.
///
/// Coordinates where both sides are below 1e-7 in magnitude count as exact
/// (dead relu paths produce true zeros against difference noise).
pub fn grad_check<F>(
    mut f: F,
    params: &mut ParameterSet,
    analytic: &Gradients,
    count: usize,
    step: f64,
    rng: &mut impl Rng,
) -> Result<f64, NnError>
where
    F: FnMut(&ParameterSet) -> Result<f64, NnError>,
{
    let names: Vec<String> = params.names().cloned().collect();
    let sizes: Vec<usize> = names.iter().map(|n| params.get(n).len()).collect();
    let total: usize = sizes.iter().sum();
    if total == 0 {
        return Ok(0.0);
    }
    let mut worst = 0.0f64;
    for _ in 0..count {
        let mut flat = rng.gen_range(0..total);
        let mut which = 0;
        while flat >= sizes[which] {
            flat -= sizes[which];
            which += 1;
        }
        let name = &names[which];
        let original = params.get(name).data()[flat];

        params.get_mut(name).data_mut()[flat] = original + step;
        let plus = f(params)?;
        params.get_mut(name).data_mut()[flat] = original - step;
        let minus = f(params)?;
        params.get_mut(name).data_mut()[flat] = original;

        if !plus.is_finite() || !minus.is_finite() {
            return Err(NnError::NonFinite(format!(
                "finite-difference probe of {name}[{flat}]"
            )));
        }
        let numeric = (plus - minus) / (2.0 * step);
        let ana = analytic.get(name).data()[flat];
        if numeric.abs() < 1e-7 && ana.abs() < 1e-7 {
            continue;
        }
        let rel = (numeric - ana).abs() / numeric.abs().max(ana.abs());
        worst = worst.max(rel);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{dense, dense_backward, relu, relu_backward, Tensor};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn quadratic_form_checks_tightly() {
        // f(w) = Σ w_i², df/dw_i = 2 w_i.
        let mut params = ParameterSet::new();
        params.insert(
            "w",
            Tensor::from_vec(&[4], vec![0.3, -1.2, 2.0, 0.7]).unwrap(),
        );
        let mut grads = Gradients::zeros_like(&params);
        for (g, w) in grads
            .get_mut("w")
            .data_mut()
            .iter_mut()
            .zip(params.get("w").data().to_vec())
        {
            *g = 2.0 * w;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let err = grad_check(
            |p| Ok(p.get("w").data().iter().map(|v| v * v).sum()),
            &mut params,
            &grads,
            20,
            1e-5,
            &mut rng,
        )
        .unwrap();
        assert!(err <= 1e-6, "relative error {err}");
    }

    #[test]
    fn constant_function_has_zero_gradient() {
        let mut params = ParameterSet::new();
        params.insert("w", Tensor::from_vec(&[3], vec![1.0, 2.0, 3.0]).unwrap());
        let grads = Gradients::zeros_like(&params);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let err = grad_check(|_| Ok(42.0), &mut params, &grads, 10, 1e-5, &mut rng).unwrap();
        assert_eq!(err, 0.0);
    }

    #[test]
    fn composed_dense_relu_dense_checks() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut params = ParameterSet::new();
        params.insert_glorot("l1.w", &[4, 6], 4, 6, &mut rng);
        params.insert_glorot("l1.b", &[6], 4, 6, &mut rng);
        params.insert_glorot("l2.w", &[6, 1], 6, 1, &mut rng);
        params.insert_glorot("l2.b", &[1], 6, 1, &mut rng);
        let input = vec![0.5, -0.3, 0.8, 1.1];

        let forward = |p: &ParameterSet| -> Result<f64, NnError> {
            let h = relu(&dense(&input, p.get("l1.w"), p.get("l1.b"))?);
            Ok(dense(&h, p.get("l2.w"), p.get("l2.b"))?[0])
        };

        // Analytic gradients by hand-chained backward passes.
        let h_pre = dense(&input, params.get("l1.w"), params.get("l1.b")).unwrap();
        let h = relu(&h_pre);
        let mut grads = Gradients::zeros_like(&params);
        let mut grad_h = vec![0.0; 6];
        {
            let (gw2, gb2) = (grads.get("l2.w").clone(), grads.get("l2.b").clone());
            let mut gw2 = gw2;
            let mut gb2 = gb2;
            dense_backward(&h, params.get("l2.w"), &[1.0], &mut gw2, &mut gb2, &mut grad_h);
            *grads.get_mut("l2.w") = gw2;
            *grads.get_mut("l2.b") = gb2;
        }
        let mut grad_h_pre = vec![0.0; 6];
        relu_backward(&h, &grad_h, &mut grad_h_pre);
        {
            let mut gw1 = grads.get("l1.w").clone();
            let mut gb1 = grads.get("l1.b").clone();
            let mut grad_in = vec![0.0; 4];
            dense_backward(
                &input,
                params.get("l1.w"),
                &grad_h_pre,
                &mut gw1,
                &mut gb1,
                &mut grad_in,
            );
            *grads.get_mut("l1.w") = gw1;
            *grads.get_mut("l1.b") = gb1;
        }

        let err = grad_check(forward, &mut params, &grads, 40, 1e-5, &mut rng).unwrap();
        assert!(err <= 1e-4, "relative error {err}");
    }
}
