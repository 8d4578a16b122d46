//! Principal-component projection to the plane.
//!
//! Small dense symmetric eigenproblem, solved with cyclic Jacobi rotations.
//! Dimensions here are latent widths (tens, occasionally low hundreds), so
//! the O(d^3)-per-sweep cost is irrelevant and Jacobi's simplicity and
//! unconditional symmetric-case convergence win over anything fancier.

use alloc::vec;
use alloc::vec::Vec;

/// Eigenvalue below this is treated as a zero-variance direction.
const VARIANCE_TOL: f64 = 1e-12;

/// Result of projecting a point cloud onto its top two principal axes.
#[derive(Debug, Clone, PartialEq)]
pub struct PcaProjection {
    /// One `[first, second]` coordinate pair per input point, in input order.
    pub coords: Vec<[f64; 2]>,
    /// All eigenvalues of the covariance matrix, descending.
    pub eigenvalues: Vec<f64>,
    /// True when fewer than two directions carry variance; the missing
    /// coordinate(s) are zero-filled.
    pub degenerate: bool,
}

/// Center `points`, diagonalize their covariance, and project onto the two
/// leading eigenvectors.
///
/// Eigenvector signs are fixed by making each vector's first nonzero
/// loading positive, so the projection is a deterministic function of the
/// input. Ties in eigenvalues are broken by diagonal position.
pub fn pca_project(points: &[Vec<f64>]) -> PcaProjection {
    if points.is_empty() {
        return PcaProjection { coords: Vec::new(), eigenvalues: Vec::new(), degenerate: true };
    }
    let d = points[0].len();
    assert!(d >= 1, "points must have dimension >= 1");
    assert!(points.iter().all(|p| p.len() == d), "all points must share a dimension");

    let n = points.len() as f64;
    let mut mean = vec![0.0; d];
    for p in points {
        for (m, x) in mean.iter_mut().zip(p.iter()) {
            *m += x;
        }
    }
    for m in mean.iter_mut() {
        *m /= n;
    }

    let centered: Vec<Vec<f64>> =
        points.iter().map(|p| p.iter().zip(mean.iter()).map(|(x, m)| x - m).collect()).collect();

    // Population covariance, row-major d x d.
    let mut cov = vec![0.0; d * d];
    for p in &centered {
        for i in 0..d {
            for j in i..d {
                cov[i * d + j] += p[i] * p[j];
            }
        }
    }
    for i in 0..d {
        for j in i..d {
            cov[i * d + j] /= n;
            cov[j * d + i] = cov[i * d + j];
        }
    }

    let (eigenvalues, vectors) = jacobi_eigen(&mut cov, d);

    // Order directions by descending eigenvalue; stable sort keeps diagonal
    // position as the tiebreak.
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eigenvalues[b].partial_cmp(&eigenvalues[a]).expect("finite eigenvalues"));

    let sorted_eigenvalues: Vec<f64> = order.iter().map(|&i| eigenvalues[i]).collect();

    let mut axes: [Vec<f64>; 2] = [vec![0.0; d], vec![0.0; d]];
    let mut live = [false; 2];
    for a in 0..2.min(d) {
        if sorted_eigenvalues[a] > VARIANCE_TOL {
            let col = order[a];
            let mut v: Vec<f64> = (0..d).map(|r| vectors[r * d + col]).collect();
            // Sign convention: first nonzero loading positive.
            if let Some(lead) = v.iter().find(|x| x.abs() > 1e-12) {
                if *lead < 0.0 {
                    for x in v.iter_mut() {
                        *x = -*x;
                    }
                }
            }
            axes[a] = v;
            live[a] = true;
        }
    }

    let coords = centered
        .iter()
        .map(|p| {
            let mut c = [0.0; 2];
            for a in 0..2 {
                if live[a] {
                    c[a] = p.iter().zip(axes[a].iter()).map(|(x, v)| x * v).sum();
                }
            }
            c
        })
        .collect();

    PcaProjection { coords, eigenvalues: sorted_eigenvalues, degenerate: !(live[0] && live[1]) }
}

/// Cyclic Jacobi for a symmetric matrix (row-major, destroyed in place).
/// Returns (diagonal eigenvalues, eigenvector matrix with eigenvectors as
/// columns, aligned with the eigenvalue indices).
fn jacobi_eigen(a: &mut [f64], d: usize) -> (Vec<f64>, Vec<f64>) {
    let mut v = vec![0.0; d * d];
    for i in 0..d {
        v[i * d + i] = 1.0;
    }
    if d == 1 {
        return (vec![a[0]], v);
    }

    let scale: f64 = a.iter().map(|x| x * x).sum::<f64>().max(1.0);
    let tol = 1e-30 * scale;

    for _sweep in 0..100 {
        let off: f64 = (0..d)
            .flat_map(|p| (0..d).filter(move |q| *q != p).map(move |q| (p, q)))
            .map(|(p, q)| a[p * d + q] * a[p * d + q])
            .sum();
        if off <= tol {
            break;
        }
        for p in 0..d - 1 {
            for q in p + 1..d {
                let apq = a[p * d + q];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[q * d + q] - a[p * d + p]) / (2.0 * apq);
                let t = if theta >= 0.0 {
                    1.0 / (theta + libm::sqrt(theta * theta + 1.0))
                } else {
                    -1.0 / (-theta + libm::sqrt(theta * theta + 1.0))
                };
                let c = 1.0 / libm::sqrt(t * t + 1.0);
                let s = t * c;

                let app = a[p * d + p];
                let aqq = a[q * d + q];
                a[p * d + p] = c * c * app - 2.0 * s * c * apq + s * s * aqq;
                a[q * d + q] = s * s * app + 2.0 * s * c * apq + c * c * aqq;
                a[p * d + q] = 0.0;
                a[q * d + p] = 0.0;
                for k in 0..d {
                    if k != p && k != q {
                        let akp = a[k * d + p];
                        let akq = a[k * d + q];
                        a[k * d + p] = c * akp - s * akq;
                        a[p * d + k] = a[k * d + p];
                        a[k * d + q] = s * akp + c * akq;
                        a[q * d + k] = a[k * d + q];
                    }
                    let vkp = v[k * d + p];
                    let vkq = v[k * d + q];
                    v[k * d + p] = c * vkp - s * vkq;
                    v[k * d + q] = s * vkp + c * vkq;
                }
            }
        }
    }

    ((0..d).map(|i| a[i * d + i]).collect(), v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn line_in_the_plane_recovers_direction_and_variance() {
        // Points t * (3, 4), t in {-2..2}: the only principal axis is
        // (0.6, 0.8) and the projected coordinate is 5t. Population
        // variance of t is 2, so the leading eigenvalue is 2 * 25 = 50.
        let points: Vec<Vec<f64>> =
            [-2.0, -1.0, 0.0, 1.0, 2.0].iter().map(|t| vec![3.0 * t, 4.0 * t]).collect();
        let proj = pca_project(&points);
        assert!(proj.degenerate, "a 1-D cloud has no second axis");
        assert!((proj.eigenvalues[0] - 50.0).abs() < 1e-9);
        assert!(proj.eigenvalues[1].abs() < 1e-9);
        for (p, t) in proj.coords.iter().zip([-2.0f64, -1.0, 0.0, 1.0, 2.0]) {
            assert!((p[0] - 5.0 * t).abs() < 1e-9, "coord {} for t {}", p[0], t);
            assert_eq!(p[1], 0.0);
        }
    }

    #[test]
    fn identical_points_are_degenerate_with_zero_coords() {
        let points = vec![vec![1.0, 2.0, 3.0]; 6];
        let proj = pca_project(&points);
        assert!(proj.degenerate);
        assert!(proj.coords.iter().all(|c| c == &[0.0, 0.0]));
        assert!(proj.eigenvalues.iter().all(|l| l.abs() < 1e-12));
    }

    #[test]
    fn matches_closed_form_two_by_two_eigenvalues() {
        // Oracle: eigenvalues of [[a, b], [b, c]] are
        // (a+c)/2 ± sqrt(((a-c)/2)^2 + b^2), computed independently from
        // the same covariance entries.
        let points = vec![
            vec![2.0, 1.0],
            vec![-1.0, 0.5],
            vec![0.5, -2.0],
            vec![3.0, 2.5],
            vec![-2.5, -1.0],
        ];
        let n = points.len() as f64;
        let mx: f64 = points.iter().map(|p| p[0]).sum::<f64>() / n;
        let my: f64 = points.iter().map(|p| p[1]).sum::<f64>() / n;
        let a: f64 = points.iter().map(|p| (p[0] - mx) * (p[0] - mx)).sum::<f64>() / n;
        let b: f64 = points.iter().map(|p| (p[0] - mx) * (p[1] - my)).sum::<f64>() / n;
        let c: f64 = points.iter().map(|p| (p[1] - my) * (p[1] - my)).sum::<f64>() / n;
        let mid = (a + c) / 2.0;
        let rad = (((a - c) / 2.0).powi(2) + b * b).sqrt();

        let proj = pca_project(&points);
        assert!(!proj.degenerate);
        assert!((proj.eigenvalues[0] - (mid + rad)).abs() < 1e-12);
        assert!((proj.eigenvalues[1] - (mid - rad)).abs() < 1e-12);
    }

    #[test]
    fn planar_cloud_in_three_dims_keeps_pairwise_distances() {
        // A rigid rotation cannot change distances within the spanned plane.
        let points = vec![
            vec![1.0, 0.0, 1.0],
            vec![-1.0, 0.0, -1.0],
            vec![0.0, 2.0, 0.0],
            vec![0.0, -2.0, 0.0],
            vec![1.0, 2.0, 1.0],
        ];
        let proj = pca_project(&points);
        assert!(!proj.degenerate);
        for i in 0..points.len() {
            for j in 0..points.len() {
                let orig: f64 = (0..3).map(|k| (points[i][k] - points[j][k]).powi(2)).sum();
                let proj_d: f64 =
                    (0..2).map(|k| (proj.coords[i][k] - proj.coords[j][k]).powi(2)).sum();
                assert!(
                    (orig - proj_d).abs() < 1e-9,
                    "distance {i},{j}: {orig} vs {proj_d}"
                );
            }
        }
    }

    #[test]
    fn eigenvalues_sum_to_total_variance() {
        let points: Vec<Vec<f64>> = (0..40)
            .map(|i| {
                let t = i as f64;
                vec![(t * 0.7).sin(), (t * 0.3).cos() * 2.0, t * 0.01, (t * 1.3).sin() * 0.5]
            })
            .collect();
        let n = points.len() as f64;
        let d = 4;
        let mut mean = vec![0.0; d];
        for p in &points {
            for k in 0..d {
                mean[k] += p[k] / n;
            }
        }
        let total: f64 = points
            .iter()
            .map(|p| (0..d).map(|k| (p[k] - mean[k]).powi(2)).sum::<f64>())
            .sum::<f64>()
            / n;
        let proj = pca_project(&points);
        let sum: f64 = proj.eigenvalues.iter().sum();
        assert!((sum - total).abs() < 1e-9 * total.max(1.0));
    }

    #[test]
    fn captured_variance_equals_leading_eigenvalues() {
        // The coordinates along each principal axis have variance equal to
        // that axis's eigenvalue, so the residual (reconstruction error)
        // is exactly the sum of the trailing eigenvalues.
        let mut rng = crate::numerics::Rng::new(404);
        let points: Vec<Vec<f64>> = (0..60)
            .map(|_| {
                let z = rng.sample_standard_normal(5);
                // Anisotropic stretch so the spectrum is well separated.
                vec![3.0 * z[0], 2.0 * z[1] + z[0], z[2], 0.5 * z[3], 0.1 * z[4]]
            })
            .collect();
        let proj = pca_project(&points);
        let n = points.len() as f64;
        for axis in 0..2 {
            let var: f64 = proj.coords.iter().map(|c| c[axis] * c[axis]).sum::<f64>() / n;
            assert!(
                (var - proj.eigenvalues[axis]).abs() < 1e-9,
                "axis {axis}: coord variance {var} vs eigenvalue {}",
                proj.eigenvalues[axis]
            );
        }
    }

    #[test]
    fn empty_input_is_degenerate() {
        let proj = pca_project(&[]);
        assert!(proj.degenerate);
        assert!(proj.coords.is_empty());
    }

    proptest! {
        #[test]
        fn translation_leaves_projection_unchanged(
            seed in 0u64..1000,
            shift in proptest::collection::vec(-50.0f64..50.0, 3),
        ) {
            let mut rng = crate::numerics::Rng::new(seed);
            let points: Vec<Vec<f64>> =
                (0..12).map(|_| rng.sample_standard_normal(3)).collect();
            let shifted: Vec<Vec<f64>> = points
                .iter()
                .map(|p| p.iter().zip(shift.iter()).map(|(x, s)| x + s).collect())
                .collect();
            let a = pca_project(&points);
            let b = pca_project(&shifted);
            prop_assert_eq!(a.degenerate, b.degenerate);
            for (ca, cb) in a.coords.iter().zip(b.coords.iter()) {
                prop_assert!((ca[0] - cb[0]).abs() < 1e-9);
                prop_assert!((ca[1] - cb[1]).abs() < 1e-9);
            }
        }
    }
}
