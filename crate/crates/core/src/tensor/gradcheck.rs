//! Central-finite-difference gradient validation.

use crate::error::{Error, Result};
use crate::tensor::{Graph, Tensor, Var};

/// Compare analytic gradients of `f` against central finite differences.
///
/// `f` builds a scalar loss from leaves created for each tensor in `theta`.
/// Returns the maximum over all coordinates of
/// `|analytic - numeric| / max(1e-8, |analytic| + |numeric|)`.
/// The step per coordinate is `1e-5 * max(1, |theta_i|)`.
pub fn grad_check<F>(f: F, theta: &[Tensor]) -> Result<f64>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let eval = |points: &[Tensor], with_grad: bool| -> Result<(f64, Vec<Option<Tensor>>)> {
        let mut g = Graph::new();
        let vars: Vec<Var> = points.iter().map(|t| g.leaf(t, with_grad)).collect();
        let loss = f(&mut g, &vars)?;
        if !g.value(loss).is_scalar() {
            return Err(Error::NonScalarLoss(g.value(loss).shape().to_vec()));
        }
        let value = g.value(loss).item();
        let grads = if with_grad {
            g.backward(loss)?;
            vars.iter().map(|&v| g.grad(v)).collect()
        } else {
            Vec::new()
        };
        Ok((value, grads))
    };

    let (_, analytic) = eval(theta, true)?;
    let mut worst: f64 = 0.0;
    let mut work: Vec<Tensor> = theta.to_vec();
    for (ti, t) in theta.iter().enumerate() {
        let grad = analytic[ti].clone().unwrap_or_else(|| {
            Tensor::zeros(t.shape(), crate::tensor::DType::F64)
        });
        for i in 0..t.numel() {
            let orig = t.data()[i];
            let h = 1e-5 * orig.abs().max(1.0);

            work[ti].data_mut()[i] = orig + h;
            let (up, _) = eval(&work, false)?;
            work[ti].data_mut()[i] = orig - h;
            let (down, _) = eval(&work, false)?;
            work[ti].data_mut()[i] = orig;

            let numeric = (up - down) / (2.0 * h);
            let a = grad.data()[i];
            if !numeric.is_finite() || !a.is_finite() {
                return Err(Error::NonFinite {
                    context: format!("grad_check tensor {ti}"),
                    index: i,
                });
            }
            let rel = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-8);
            worst = worst.max(rel);
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use crate::tensor::DType;

    #[test]
    fn sum_of_squares_checks_tightly() {
        let mut rng = stream(17, &[]);
        let x = Tensor::randn(&[6], 1.0, &mut rng, DType::F64);
        let err = grad_check(
            |g, vars| {
                let sq = g.mul(vars[0], vars[0])?;
                g.sum(sq)
            },
            &[x],
        )
        .unwrap();
        assert!(err < 1e-8, "rel err {err}");
    }

    #[test]
    fn two_layer_mlp_matches_finite_differences() {
        let mut rng = stream(23, &[]);
        let w1 = Tensor::randn(&[5, 4], 0.5, &mut rng, DType::F64);
        let b1 = Tensor::randn(&[4], 0.5, &mut rng, DType::F64);
        let w2 = Tensor::randn(&[4, 3], 0.5, &mut rng, DType::F64);
        let x = Tensor::randn(&[2, 5], 1.0, &mut rng, DType::F64);
        let err = grad_check(
            |g, vars| {
                let xv = g.constant(&x);
                let h = g.matmul(xv, vars[0])?;
                let h = g.add_row(h, vars[1])?;
                let h = g.gelu(h)?;
                let y = g.matmul(h, vars[2])?;
                g.cross_entropy(y, &[2, 0])
            },
            &[w1, b1, w2],
        )
        .unwrap();
        assert!(err < 1e-4, "rel err {err}");
    }

    #[test]
    fn every_primitive_checks_against_finite_differences() {
        // 100 randomized trials across the primitive set, fixed seed.
        for trial in 0..100 {
            let mut rng = stream(4242, &[trial]);
            let x = Tensor::randn(&[3, 4], 1.0, &mut rng, DType::F64);
            let y = Tensor::randn(&[3, 4], 1.0, &mut rng, DType::F64);
            let gain = Tensor::randn(&[4], 0.3, &mut rng, DType::F64);
            let which = (trial % 10) as usize;
            let err = grad_check(
                |g, v| {
                    let out = match which {
                        0 => {
                            let yt = g.transpose(v[1])?;
                            g.matmul(v[0], yt)?
                        }
                        1 => g.add(v[0], v[1])?,
                        2 => g.mul(v[0], v[1])?,
                        3 => g.gelu(v[0])?,
                        4 => g.softmax(v[0])?,
                        5 => g.log_softmax(v[0])?,
                        6 => {
                            let one = Tensor::from_vec(
                                &[4],
                                vec![0.1, 0.2, -0.1, 0.4],
                                DType::F64,
                            )
                            .unwrap();
                            let bias = g.constant(&one);
                            g.layer_norm(v[0], v[2], bias, 1e-5)?
                        }
                        7 => g.concat_rows(&[v[0], v[1]])?,
                        8 => {
                            let s = g.slice_cols(v[0], 1, 3)?;
                            g.gather_rows(s, &[2, 0, 1, 2])?
                        }
                        _ => {
                            let m = g.max_over_rows(v[0])?;
                            let r = g.reshape(m, &[1, 4])?;
                            g.add_row(r, v[2])?
                        }
                    };
                    let sm = g.log_softmax(out)?;
                    g.mean(sm)
                },
                &[x, y, gain],
            )
            .unwrap();
            assert!(err < 1e-4, "trial {trial} rel err {err}");
        }
    }
}
