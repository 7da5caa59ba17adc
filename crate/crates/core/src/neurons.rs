//! Neuron kernels: linear, general-quadratic oracle, product-quadratic
//! baseline, and the efficient rank-k quadratic neuron with vectorized
//! output.
//!
//! The efficient neuron computes
//!
//! ```text
//! f = (Q^k)^T x                       (k intermediate features)
//! y = w^T x + b + (1/k) sum_i lam_i f_i^2
//! ```
//!
//! and emits both `y` and `f`, so one neuron produces k+1 channels. `f` is
//! computed once and reused for the quadratic term and the output; that
//! evaluation order is part of the cost contract.

use crate::error::{Error, Result};
use crate::numerics::{dot, eigh, symmetrize, topk_truncate, Tensor, EIGH_TOL};

/// Plain linear neuron: `w^T x + b`.
#[derive(Debug, Clone)]
pub struct LinearNeuronParams {
    pub w: Vec<f64>,
    pub b: f64,
}

/// General quadratic neuron `x^T M x + w^T x + b`; the brute-force oracle.
#[derive(Debug, Clone)]
pub struct GeneralQuadParams {
    pub m: Tensor,
    pub w: Vec<f64>,
    pub b: f64,
}

/// Efficient rank-k quadratic neuron.
///
/// `qk` is n-by-k with the retained eigenvector directions as columns;
/// `lam` holds the k diagonal values of the (pre-scaled) eigenvalue matrix.
#[derive(Debug, Clone)]
pub struct QuadNeuronParams {
    pub qk: Tensor,
    pub lam: Vec<f64>,
    pub w: Vec<f64>,
    pub b: f64,
    pub k: usize,
}

/// Product-form baseline `(w1^T x)(w2^T x) + w3^T x + b`.
#[derive(Debug, Clone)]
pub struct ProductQuadParams {
    pub w1: Vec<f64>,
    pub w2: Vec<f64>,
    pub w3: Vec<f64>,
    pub b: f64,
}

/// Gradients of a quadratic neuron, mirroring [`QuadNeuronParams`].
#[derive(Debug, Clone)]
pub struct QuadNeuronGrads {
    pub qk: Tensor,
    pub lam: Vec<f64>,
    pub w: Vec<f64>,
    pub b: f64,
}

pub fn linear_forward(p: &LinearNeuronParams, x: &[f64]) -> Result<f64> {
    if p.w.len() != x.len() {
        return Err(Error::Shape(format!(
            "linear_forward: weight length {} vs input length {}",
            p.w.len(),
            x.len()
        )));
    }
    Ok(dot(&p.w, x) + p.b)
}

/// Oracle evaluation by the explicit double loop. Deliberately not
/// factorized so it cannot share bugs with the rank-k path.
pub fn general_quad_forward(p: &GeneralQuadParams, x: &[f64]) -> Result<f64> {
    let n = x.len();
    if p.m.shape() != [n, n] || p.w.len() != n {
        return Err(Error::Shape(format!(
            "general_quad_forward: M {:?}, w {} vs input {}",
            p.m.shape(),
            p.w.len(),
            n
        )));
    }
    let mut acc = 0.0;
    for i in 0..n {
        for j in 0..n {
            acc += x[i] * p.m.get2(i, j) * x[j];
        }
    }
    Ok(acc + dot(&p.w, x) + p.b)
}

pub fn product_quad_forward(p: &ProductQuadParams, x: &[f64]) -> Result<f64> {
    let n = x.len();
    if p.w1.len() != n || p.w2.len() != n || p.w3.len() != n {
        return Err(Error::Shape(format!(
            "product_quad_forward: weight lengths {}/{}/{} vs input {}",
            p.w1.len(),
            p.w2.len(),
            p.w3.len(),
            n
        )));
    }
    Ok(dot(&p.w1, x) * dot(&p.w2, x) + dot(&p.w3, x) + p.b)
}

impl QuadNeuronParams {
    pub fn input_size(&self) -> usize {
        self.w.len()
    }

    fn check(&self, x: &[f64]) -> Result<()> {
        let n = self.w.len();
        if self.qk.shape() != [n, self.k] || self.lam.len() != self.k {
            return Err(Error::Shape(format!(
                "quad neuron: qk {:?}, lam {} inconsistent with n={n}, k={}",
                self.qk.shape(),
                self.lam.len(),
                self.k
            )));
        }
        if x.len() != n {
            return Err(Error::Shape(format!(
                "quad neuron: input length {} vs n={n}",
                x.len()
            )));
        }
        Ok(())
    }
}

/// Forward pass: returns `(y, f)`.
pub fn quad_forward(p: &QuadNeuronParams, x: &[f64]) -> Result<(f64, Vec<f64>)> {
    p.check(x)?;
    let n = x.len();
    let k = p.k;
    let mut f = vec![0.0; k];
    for i in 0..k {
        let mut acc = 0.0;
        for j in 0..n {
            acc += p.qk.get2(j, i) * x[j];
        }
        f[i] = acc;
    }
    let mut quad = 0.0;
    for i in 0..k {
        quad += p.lam[i] * f[i] * f[i];
    }
    let y = dot(&p.w, x) + p.b + quad / k as f64;
    Ok((y, f))
}

/// Backward pass given upstream gradients `gy` (w.r.t. y) and `gf`
/// (w.r.t. each f\[i\]). Returns the input gradient and parameter gradients;
/// both the y path and the f path are accumulated.
pub fn quad_backward(
    p: &QuadNeuronParams,
    x: &[f64],
    gy: f64,
    gf: &[f64],
) -> Result<(Vec<f64>, QuadNeuronGrads)> {
    p.check(x)?;
    if gf.len() != p.k {
        return Err(Error::Shape(format!(
            "quad_backward: gf length {} vs k={}",
            gf.len(),
            p.k
        )));
    }
    let n = x.len();
    let k = p.k;
    let kf = k as f64;
    let (_, f) = quad_forward(p, x)?;

    let mut grads = QuadNeuronGrads {
        qk: Tensor::zeros(&[n, k]),
        lam: vec![0.0; k],
        w: vec![0.0; n],
        b: gy,
    };
    let mut gx = vec![0.0; n];

    for j in 0..n {
        grads.w[j] = gy * x[j];
        gx[j] = gy * p.w[j];
    }
    for i in 0..k {
        grads.lam[i] = gy * f[i] * f[i] / kf;
        // Column i receives the quadratic-path and feature-path pulls.
        let s = gy * (2.0 / kf) * p.lam[i] * f[i] + gf[i];
        for j in 0..n {
            let v = grads.qk.get2(j, i) + s * x[j];
            grads.qk.set2(j, i, v);
            gx[j] += s * p.qk.get2(j, i);
        }
    }
    Ok((gx, grads))
}

/// Builds an efficient neuron from a general quadratic neuron's matrix:
/// symmetrize, eigendecompose, keep the k largest-magnitude eigenpairs.
///
/// `lam` stores k times the eigenvalue so the 1/k normalization applied at
/// runtime cancels and the neuron evaluates `x^T Q^k L^k (Q^k)^T x + w^T x + b`
/// exactly.
pub fn from_general(m: &Tensor, w: &[f64], b: f64, k: usize) -> Result<QuadNeuronParams> {
    let sym = symmetrize(m)?;
    let e = eigh(&sym, EIGH_TOL)?;
    let (qk, lam_raw) = topk_truncate(&e, k)?;
    let lam: Vec<f64> = lam_raw.iter().map(|l| l * k as f64).collect();
    Ok(QuadNeuronParams {
        qk,
        lam,
        w: w.to_vec(),
        b,
        k,
    })
}

/// Exact parameter and MAC counts of one efficient neuron (bias excluded):
/// `params = (k+1)n + k`, `macs = (k+1)n + 2k`.
pub fn neuron_cost(n: u64, k: u64) -> (u64, u64) {
    ((k + 1) * n + k, (k + 1) * n + 2 * k)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Rng;

    fn rand_vec(rng: &mut Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.range(-1.0, 1.0)).collect()
    }

    #[test]
    fn linear_hand_cases() {
        let p = LinearNeuronParams {
            w: vec![1.0, 2.0],
            b: 1.0,
        };
        assert_eq!(linear_forward(&p, &[3.0, 4.0]).unwrap(), 12.0);
        let z = LinearNeuronParams {
            w: vec![0.0; 3],
            b: 2.5,
        };
        assert_eq!(linear_forward(&z, &[9.0, -1.0, 4.0]).unwrap(), 2.5);
        assert!(linear_forward(&p, &[1.0]).is_err());
    }

    #[test]
    fn linear_matches_naive_loop_oracle() {
        let mut rng = Rng::new(2);
        let n = 64;
        let p = LinearNeuronParams {
            w: rand_vec(&mut rng, n),
            b: rng.range(-1.0, 1.0),
        };
        let x = rand_vec(&mut rng, n);
        let mut oracle = p.b;
        for i in 0..n {
            oracle += p.w[i] * x[i];
        }
        let got = linear_forward(&p, &x).unwrap();
        assert!((got - oracle).abs() <= 1e-12 * oracle.abs().max(1.0));
    }

    #[test]
    fn general_quad_hand_cases() {
        let p = GeneralQuadParams {
            m: Tensor::identity(3),
            w: vec![0.0; 3],
            b: 0.0,
        };
        assert_eq!(general_quad_forward(&p, &[1.0, 2.0, 3.0]).unwrap(), 14.0);
        let p2 = GeneralQuadParams {
            m: Tensor::from_vec(&[2, 2], vec![0.0, 2.0, 0.0, 0.0]).unwrap(),
            w: vec![0.0; 2],
            b: 0.0,
        };
        assert_eq!(general_quad_forward(&p2, &[1.0, 1.0]).unwrap(), 2.0);
    }

    #[test]
    fn general_quad_matches_nine_term_expansion() {
        let mut rng = Rng::new(13);
        let m = Tensor::from_fn(&[3, 3], |_| rng.range(-1.0, 1.0)).unwrap();
        let x = rand_vec(&mut rng, 3);
        let p = GeneralQuadParams {
            m: m.clone(),
            w: vec![0.0; 3],
            b: 0.0,
        };
        // Literal term-by-term transcription of the 3x3 expansion.
        let expect = m.get2(0, 0) * x[0] * x[0]
            + m.get2(0, 1) * x[0] * x[1]
            + m.get2(0, 2) * x[0] * x[2]
            + m.get2(1, 0) * x[1] * x[0]
            + m.get2(1, 1) * x[1] * x[1]
            + m.get2(1, 2) * x[1] * x[2]
            + m.get2(2, 0) * x[2] * x[0]
            + m.get2(2, 1) * x[2] * x[1]
            + m.get2(2, 2) * x[2] * x[2];
        let got = general_quad_forward(&p, &x).unwrap();
        assert!((got - expect).abs() <= 1e-12 * expect.abs().max(1.0));
    }

    #[test]
    fn quad_forward_hand_case() {
        let p = QuadNeuronParams {
            qk: Tensor::from_vec(&[2, 1], vec![1.0, 0.0]).unwrap(),
            lam: vec![2.0],
            w: vec![0.0; 2],
            b: 0.0,
            k: 1,
        };
        let (y, f) = quad_forward(&p, &[3.0, 4.0]).unwrap();
        assert_eq!(f, vec![3.0]);
        assert_eq!(y, 18.0);
    }

    #[test]
    fn quad_forward_zero_lambda_is_linear() {
        let mut rng = Rng::new(31);
        let n = 6;
        let k = 3;
        let p = QuadNeuronParams {
            qk: Tensor::from_fn(&[n, k], |_| rng.range(-1.0, 1.0)).unwrap(),
            lam: vec![0.0; k],
            w: rand_vec(&mut rng, n),
            b: 0.4,
            k,
        };
        let x = rand_vec(&mut rng, n);
        let (y, f) = quad_forward(&p, &x).unwrap();
        let lin = LinearNeuronParams {
            w: p.w.clone(),
            b: p.b,
        };
        assert_eq!(y, linear_forward(&lin, &x).unwrap());
        for i in 0..k {
            let col: Vec<f64> = (0..n).map(|j| p.qk.get2(j, i)).collect();
            let lin_i = LinearNeuronParams { w: col, b: 0.0 };
            assert_eq!(f[i], linear_forward(&lin_i, &x).unwrap());
        }
    }

    #[test]
    fn from_general_full_rank_matches_oracle() {
        let mut rng = Rng::new(44);
        for _ in 0..50 {
            let n = 2 + rng.below(9);
            let m = crate::numerics::symmetrize(
                &Tensor::from_fn(&[n, n], |_| rng.range(-1.0, 1.0)).unwrap(),
            )
            .unwrap();
            let w = rand_vec(&mut rng, n);
            let b = rng.range(-1.0, 1.0);
            let oracle = GeneralQuadParams {
                m: m.clone(),
                w: w.clone(),
                b,
            };
            let p = from_general(&m, &w, b, n).unwrap();
            let x = rand_vec(&mut rng, n);
            let want = general_quad_forward(&oracle, &x).unwrap();
            let (got, _) = quad_forward(&p, &x).unwrap();
            assert!(
                (got - want).abs() <= 1e-8 * want.abs().max(1.0),
                "n={n}: {got} vs {want}"
            );
        }
    }

    #[test]
    fn from_general_identity_quadratic_part() {
        let w = vec![0.3, -0.7];
        let b = 0.2;
        let p = from_general(&Tensor::identity(2), &w, b, 2).unwrap();
        let x = [1.0, 2.0];
        let (y, _) = quad_forward(&p, &x).unwrap();
        let lin = dot(&w, &x) + b;
        assert!((y - lin - 5.0).abs() <= 1e-10);
    }

    #[test]
    fn from_general_k1_drops_small_eigendirection() {
        let m = Tensor::from_vec(&[2, 2], vec![10.0, 0.0, 0.0, 0.1]).unwrap();
        let p = from_general(&m, &[0.0, 0.0], 0.0, 1).unwrap();
        let mut rng = Rng::new(6);
        for _ in 0..10 {
            let x = [rng.range(-1.0, 1.0), rng.range(-1.0, 1.0)];
            let (y, _) = quad_forward(&p, &x).unwrap();
            let expect = 10.0 * x[0] * x[0];
            assert!((y - expect).abs() <= 1e-10);
        }
    }

    #[test]
    fn product_quad_cases() {
        let p = ProductQuadParams {
            w1: vec![1.0, 0.0],
            w2: vec![1.0, 0.0],
            w3: vec![0.0; 2],
            b: 0.0,
        };
        assert_eq!(product_quad_forward(&p, &[3.0, 7.0]).unwrap(), 9.0);

        let mut rng = Rng::new(15);
        let n = 16;
        let p = ProductQuadParams {
            w1: rand_vec(&mut rng, n),
            w2: rand_vec(&mut rng, n),
            w3: rand_vec(&mut rng, n),
            b: rng.range(-1.0, 1.0),
        };
        let x = rand_vec(&mut rng, n);
        // Compositional oracle: two linear evaluations and a product.
        let l1 = linear_forward(
            &LinearNeuronParams {
                w: p.w1.clone(),
                b: 0.0,
            },
            &x,
        )
        .unwrap();
        let l2 = linear_forward(
            &LinearNeuronParams {
                w: p.w2.clone(),
                b: 0.0,
            },
            &x,
        )
        .unwrap();
        let l3 = linear_forward(
            &LinearNeuronParams {
                w: p.w3.clone(),
                b: p.b,
            },
            &x,
        )
        .unwrap();
        let expect = l1 * l2 + l3;
        let got = product_quad_forward(&p, &x).unwrap();
        assert!((got - expect).abs() <= 1e-12 * expect.abs().max(1.0));

        // w1 = 0 reduces to the linear neuron on (w3, b).
        let p0 = ProductQuadParams {
            w1: vec![0.0; n],
            w2: rand_vec(&mut rng, n),
            w3: p.w3.clone(),
            b: p.b,
        };
        assert_eq!(product_quad_forward(&p0, &x).unwrap(), l3);
    }

    #[test]
    fn neuron_cost_cases() {
        assert_eq!(neuron_cost(144, 9), (1449, 1458));
        assert_eq!(neuron_cost(1, 1), (3, 4));
        // Per-channel averages for n=144, k=9.
        let (p, m) = neuron_cost(144, 9);
        assert!((p as f64 / 10.0 - 144.9).abs() < 1e-12);
        assert!((m as f64 / 10.0 - 145.8).abs() < 1e-12);
    }

    fn random_quad(rng: &mut Rng, n: usize, k: usize) -> QuadNeuronParams {
        QuadNeuronParams {
            qk: Tensor::from_fn(&[n, k], |_| rng.range(-1.0, 1.0)).unwrap(),
            lam: (0..k).map(|_| rng.range(-1.0, 1.0)).collect(),
            w: rand_vec(rng, n),
            b: rng.range(-1.0, 1.0),
            k,
        }
    }

    #[test]
    fn backward_reduces_to_linear_with_zero_lambda() {
        let mut rng = Rng::new(50);
        let mut p = random_quad(&mut rng, 5, 2);
        p.lam = vec![0.0; 2];
        let x = rand_vec(&mut rng, 5);
        let gy = 1.7;
        let (gx, _) = quad_backward(&p, &x, gy, &[0.0, 0.0]).unwrap();
        for j in 0..5 {
            assert_eq!(gx[j], gy * p.w[j]);
        }
    }

    #[test]
    fn backward_pure_feature_path() {
        let mut rng = Rng::new(51);
        let p = random_quad(&mut rng, 4, 3);
        let x = rand_vec(&mut rng, 4);
        let (_, g) = quad_backward(&p, &x, 0.0, &[1.0, 0.0, 0.0]).unwrap();
        for j in 0..4 {
            assert_eq!(g.qk.get2(j, 0), x[j]);
            assert_eq!(g.qk.get2(j, 1), 0.0);
            assert_eq!(g.qk.get2(j, 2), 0.0);
            assert_eq!(g.w[j], 0.0);
        }
        assert_eq!(g.lam, vec![0.0; 3]);
        assert_eq!(g.b, 0.0);
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = Rng::new(52);
        let eps = 1e-5;
        for _ in 0..20 {
            let n = 8;
            let k = 3;
            let p = random_quad(&mut rng, n, k);
            let x = rand_vec(&mut rng, n);
            let gy = rng.range(-1.0, 1.0);
            let gf = rand_vec(&mut rng, k);
            // Scalar objective: gy*y + gf.f — its parameter gradients are
            // exactly what quad_backward reports.
            let loss = |p: &QuadNeuronParams, x: &[f64]| {
                let (y, f) = quad_forward(p, x).unwrap();
                gy * y + dot(&gf, &f)
            };
            let (gx, g) = quad_backward(&p, &x, gy, &gf).unwrap();

            let check = |analytic: f64, plus: f64, minus: f64, what: &str| {
                let num = (plus - minus) / (2.0 * eps);
                let rel = (analytic - num).abs() / analytic.abs().max(num.abs()).max(1e-6);
                assert!(rel <= 1e-6, "{what}: analytic {analytic} vs fd {num}");
            };

            for j in 0..n {
                let mut pp = p.clone();
                pp.w[j] += eps;
                let mut pm = p.clone();
                pm.w[j] -= eps;
                check(g.w[j], loss(&pp, &x), loss(&pm, &x), "w");
            }
            for i in 0..k {
                let mut pp = p.clone();
                pp.lam[i] += eps;
                let mut pm = p.clone();
                pm.lam[i] -= eps;
                check(g.lam[i], loss(&pp, &x), loss(&pm, &x), "lam");
                for j in 0..n {
                    let mut pp = p.clone();
                    let v = pp.qk.get2(j, i);
                    pp.qk.set2(j, i, v + eps);
                    let mut pm = p.clone();
                    pm.qk.set2(j, i, v - eps);
                    check(g.qk.get2(j, i), loss(&pp, &x), loss(&pm, &x), "qk");
                }
            }
            {
                let mut pp = p.clone();
                pp.b += eps;
                let mut pm = p.clone();
                pm.b -= eps;
                check(g.b, loss(&pp, &x), loss(&pm, &x), "b");
            }
            for j in 0..n {
                let mut xp = x.clone();
                xp[j] += eps;
                let mut xm = x.clone();
                xm[j] -= eps;
                check(gx[j], loss(&p, &xp), loss(&p, &xm), "x");
            }
        }
    }

    #[test]
    fn quadratic_part_scales_quadratically() {
        let mut rng = Rng::new(60);
        let mut p = random_quad(&mut rng, 6, 2);
        p.w = vec![0.0; 6];
        p.b = 0.0;
        let x = rand_vec(&mut rng, 6);
        let c = 1.7;
        let xs: Vec<f64> = x.iter().map(|v| v * c).collect();
        let (y1, _) = quad_forward(&p, &x).unwrap();
        let (y2, _) = quad_forward(&p, &xs).unwrap();
        assert!((y2 - c * c * y1).abs() <= 1e-10 * y1.abs().max(1.0));
    }

    #[test]
    fn truncation_error_non_increasing_in_k() {
        let mut rng = Rng::new(61);
        let n = 8;
        let m = crate::numerics::symmetrize(
            &Tensor::from_fn(&[n, n], |_| rng.range(-1.0, 1.0)).unwrap(),
        )
        .unwrap();
        let xs: Vec<Vec<f64>> = (0..200).map(|_| rand_vec(&mut rng, n)).collect();
        let oracle = GeneralQuadParams {
            m: m.clone(),
            w: vec![0.0; n],
            b: 0.0,
        };
        let full: Vec<f64> = xs
            .iter()
            .map(|x| general_quad_forward(&oracle, x).unwrap())
            .collect();
        let mut prev = f64::INFINITY;
        for k in 1..=n {
            let p = from_general(&m, &vec![0.0; n], 0.0, k).unwrap();
            let mse: f64 = xs
                .iter()
                .zip(&full)
                .map(|(x, want)| {
                    let (got, _) = quad_forward(&p, x).unwrap();
                    (got - want) * (got - want)
                })
                .sum::<f64>()
                / xs.len() as f64;
            assert!(mse <= prev + 1e-12, "k={k}: mse {mse} > prev {prev}");
            prev = mse;
        }
    }
}
