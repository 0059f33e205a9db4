//! Dense routines for the small Hermitian matrices that appear per frequency
//! bin (one row/column per microphone).

use ndarray::{Array1, Array2};
use num_complex::Complex64;

type C = Complex64;

/// Lower-triangular `L` with `a = L L^H`, or `None` if `a` is not
/// numerically positive definite.
pub fn cholesky(a: &Array2<C>) -> Option<Array2<C>> {
    let n = a.nrows();
    let mut l = Array2::<C>::zeros((n, n));
    for j in 0..n {
        let mut d = a[[j, j]].re;
        for k in 0..j {
            d -= l[[j, k]].norm_sqr();
        }
        if !(d > 0.0) || !d.is_finite() {
            return None;
        }
        let d = d.sqrt();
        l[[j, j]] = C::new(d, 0.0);
        for i in j + 1..n {
            let mut s = a[[i, j]];
            for k in 0..j {
                s -= l[[i, k]] * l[[j, k]].conj();
            }
            l[[i, j]] = s / d;
        }
    }
    Some(l)
}

/// Solves `L x = b` for lower-triangular `L`.
pub fn solve_lower(l: &Array2<C>, b: &Array1<C>) -> Array1<C> {
    let n = l.nrows();
    let mut x = b.clone();
    for i in 0..n {
        let mut s = x[i];
        for k in 0..i {
            s -= l[[i, k]] * x[k];
        }
        x[i] = s / l[[i, i]];
    }
    x
}

/// Solves `L^H x = b` for lower-triangular `L`.
pub fn solve_lower_adjoint(l: &Array2<C>, b: &Array1<C>) -> Array1<C> {
    let n = l.nrows();
    let mut x = b.clone();
    for i in (0..n).rev() {
        let mut s = x[i];
        for k in i + 1..n {
            s -= l[[k, i]].conj() * x[k];
        }
        x[i] = s / l[[i, i]].conj();
    }
    x
}

pub fn adjoint(a: &Array2<C>) -> Array2<C> {
    a.t().mapv(|c| c.conj())
}

/// `(a + a^H) / 2`.
pub fn hermitian_part(a: &Array2<C>) -> Array2<C> {
    (a + &adjoint(a)) * C::new(0.5, 0.0)
}

pub fn frobenius(a: &Array2<C>) -> f64 {
    a.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt()
}

pub fn matvec(a: &Array2<C>, x: &Array1<C>) -> Array1<C> {
    a.dot(x)
}

/// `x^H a x`, real for Hermitian `a`.
pub fn quadratic_form(a: &Array2<C>, x: &Array1<C>) -> f64 {
    x.iter().zip(a.dot(x).iter()).map(|(xi, yi)| (xi.conj() * yi).re).sum()
}

/// Eigen-decomposition of a real symmetric matrix by cyclic Jacobi rotations.
/// Returns eigenvalues ascending and the matching eigenvectors as columns.
pub fn symmetric_eigh(a: &Array2<f64>) -> (Vec<f64>, Array2<f64>) {
    let n = a.nrows();
    let mut a = a.clone();
    let mut v = Array2::<f64>::eye(n);
    let scale: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[[i, j]] * a[[i, j]])
            .sum::<f64>()
            .sqrt();
        if off <= 1e-15 * scale || off == 0.0 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[[p, q]];
                if apq.abs() <= 1e-300 {
                    continue;
                }
                let theta = (a[[q, q]] - a[[p, p]]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[[k, p]], a[[k, q]]);
                    a[[k, p]] = c * akp - s * akq;
                    a[[k, q]] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[[p, k]], a[[q, k]]);
                    a[[p, k]] = c * apk - s * aqk;
                    a[[q, k]] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let (vkp, vkq) = (v[[k, p]], v[[k, q]]);
                    v[[k, p]] = c * vkp - s * vkq;
                    v[[k, q]] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[[i, i]].total_cmp(&a[[j, j]]));
    let values = order.iter().map(|&i| a[[i, i]]).collect();
    let vectors = Array2::from_shape_fn((n, n), |(r, c)| v[[r, order[c]]]);
    (values, vectors)
}

/// Largest eigenvalue of a Hermitian matrix and a unit eigenvector for it.
///
/// Works on the real symmetric embedding `[[Re, -Im], [Im, Re]]`, whose
/// spectrum is that of `h` with every eigenvalue doubled; any real
/// eigenvector `[x; y]` of the embedding gives a complex eigenvector `x + iy`.
pub fn principal_eigenpair(h: &Array2<C>) -> (f64, Array1<C>) {
    let n = h.nrows();
    let mut e = Array2::<f64>::zeros((2 * n, 2 * n));
    for i in 0..n {
        for j in 0..n {
            let z = h[[i, j]];
            e[[i, j]] = z.re;
            e[[i + n, j + n]] = z.re;
            e[[i, j + n]] = -z.im;
            e[[i + n, j]] = z.im;
        }
    }
    let (values, vectors) = symmetric_eigh(&e);
    let top = 2 * n - 1;
    let v: Array1<C> = (0..n)
        .map(|i| C::new(vectors[[i, top]], vectors[[i + n, top]]))
        .collect();
    let norm = v.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
    (values[top], v.mapv(|c| c / norm))
}

/// All eigenvalues of a Hermitian matrix, ascending.
pub fn hermitian_eigenvalues(h: &Array2<C>) -> Vec<f64> {
    let n = h.nrows();
    let mut e = Array2::<f64>::zeros((2 * n, 2 * n));
    for i in 0..n {
        for j in 0..n {
            let z = h[[i, j]];
            e[[i, j]] = z.re;
            e[[i + n, j + n]] = z.re;
            e[[i, j + n]] = -z.im;
            e[[i + n, j]] = z.im;
        }
    }
    // Each eigenvalue appears twice in the embedding.
    symmetric_eigh(&e).0.into_iter().step_by(2).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_hpd(rng: &mut ChaCha8Rng, n: usize) -> Array2<C> {
        let a = Array2::from_shape_fn((n, 2 * n), |_| C::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)));
        a.dot(&adjoint(&a))
    }

    #[test]
    fn cholesky_reconstructs() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for n in 1..6 {
            let a = random_hpd(&mut rng, n);
            let l = cholesky(&a).unwrap();
            let back = l.dot(&adjoint(&l));
            assert!(frobenius(&(back - &a)) < 1e-12 * frobenius(&a));
        }
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let a = Array2::from_shape_vec((2, 2), vec![C::new(1.0, 0.0), C::new(2.0, 0.0), C::new(2.0, 0.0), C::new(1.0, 0.0)]).unwrap();
        assert!(cholesky(&a).is_none());
        assert!(cholesky(&Array2::zeros((3, 3))).is_none());
    }

    #[test]
    fn triangular_solves() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let l = cholesky(&random_hpd(&mut rng, 4)).unwrap();
        let b: Array1<C> = (0..4).map(|i| C::new(i as f64, 1.0)).collect();
        let x = solve_lower(&l, &b);
        assert!((l.dot(&x) - &b).iter().all(|c| c.norm() < 1e-12));
        let y = solve_lower_adjoint(&l, &b);
        assert!((adjoint(&l).dot(&y) - &b).iter().all(|c| c.norm() < 1e-12));
    }

    #[test]
    fn symmetric_eigh_diagonalizes() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let b = Array2::from_shape_fn((6, 6), |_| rng.gen_range(-1.0..1.0));
        let a = &b + &b.t();
        let (vals, vecs) = symmetric_eigh(&a);
        for w in vals.windows(2) {
            assert!(w[0] <= w[1]);
        }
        let recon = vecs.dot(&Array2::from_diag(&Array1::from(vals))).dot(&vecs.t());
        assert!((recon - &a).iter().all(|x| x.abs() < 1e-12));
    }

    #[test]
    fn principal_pair_satisfies_eigen_equation() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for n in 1..7 {
            let h = random_hpd(&mut rng, n);
            let (lam, v) = principal_eigenpair(&h);
            let r = matvec(&h, &v) - v.mapv(|c| c * lam);
            assert!(r.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt() < 1e-12 * frobenius(&h));
            let vals = hermitian_eigenvalues(&h);
            assert!((vals[n - 1] - lam).abs() < 1e-12 * frobenius(&h));
        }
    }
}
