//! Image-space height plane `h = a·x + b·y + c`.
//!
//! For grounded objects of roughly equal world height, pixel height is an
//! affine function of the bottom-middle image point. The coefficients absorb
//! focal length, person height and the world plane, so no calibration is
//! needed.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::occlusion::InstanceObservation;

/// Smallest accepted singular value ratio of the centered design matrix.
pub const MIN_CONDITION_RATIO: f64 = 1e-6;
/// Residuals beyond this many standard deviations are trimmed before the refit.
pub const TRIM_SIGMAS: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeightSample {
    pub x: f64,
    pub y: f64,
    pub h: f64,
}

impl HeightSample {
    pub fn from_observation(o: &InstanceObservation) -> Self {
        Self {
            x: o.bottom_x,
            y: o.bottom_y as f64,
            h: o.pixel_height as f64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlaneDiagnostics {
    pub samples: usize,
    pub inliers: usize,
    pub rms_residual: f64,
    pub condition_ratio: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlaneModel {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub diagnostics: PlaneDiagnostics,
}

impl PlaneModel {
    /// Model with the given coefficients and empty diagnostics.
    pub fn from_coefficients(a: f64, b: f64, c: f64) -> Self {
        Self {
            a,
            b,
            c,
            diagnostics: PlaneDiagnostics {
                samples: 0,
                inliers: 0,
                rms_residual: 0.0,
                condition_ratio: 1.0,
            },
        }
    }

    pub fn coefficients(&self) -> [f64; 3] {
        [self.a, self.b, self.c]
    }

    #[inline]
    pub fn evaluate(&self, x: f64, y: f64) -> f64 {
        self.a * x + self.b * y + self.c
    }
}

/// Singular value ratio `min / max` of the mean-centered `(x, y)` matrix.
pub fn condition_ratio(samples: &[HeightSample]) -> f64 {
    let n = samples.len() as f64;
    let mx = samples.iter().map(|s| s.x).sum::<f64>() / n;
    let my = samples.iter().map(|s| s.y).sum::<f64>() / n;
    let m = DMatrix::from_fn(samples.len(), 2, |i, j| {
        if j == 0 {
            samples[i].x - mx
        } else {
            samples[i].y - my
        }
    });
    let sv = m.singular_values();
    let max = sv.max();
    if max <= 0.0 {
        return 0.0;
    }
    sv.min() / max
}

/// Plain least-squares coefficients `[a, b, c]` (no trimming, no checks).
pub fn least_squares(samples: &[HeightSample]) -> [f64; 3] {
    let n = samples.len();
    let mx = samples.iter().map(|s| s.x).sum::<f64>() / n as f64;
    let my = samples.iter().map(|s| s.y).sum::<f64>() / n as f64;
    let design = DMatrix::from_fn(n, 3, |i, j| match j {
        0 => samples[i].x - mx,
        1 => samples[i].y - my,
        _ => 1.0,
    });
    let rhs = DVector::from_iterator(n, samples.iter().map(|s| s.h));
    let sol = design
        .svd(true, true)
        .solve(&rhs, 1e-12)
        .expect("svd with u and v");
    let (a, b, c0) = (sol[0], sol[1], sol[2]);
    [a, b, c0 - a * mx - b * my]
}

fn check_geometry(samples: &[HeightSample]) -> Result<f64> {
    if samples.len() < 3 {
        return Err(Error::InsufficientSamples {
            needed: 3,
            got: samples.len(),
        });
    }
    let ratio = condition_ratio(samples);
    if !(ratio >= MIN_CONDITION_RATIO) {
        return Err(Error::IllConditioned { ratio });
    }
    Ok(ratio)
}

fn residuals(coef: [f64; 3], samples: &[HeightSample]) -> Vec<f64> {
    samples
        .iter()
        .map(|s| coef[0] * s.x + coef[1] * s.y + coef[2] - s.h)
        .collect()
}

fn rms(values: &[f64]) -> f64 {
    (values.iter().map(|r| r * r).sum::<f64>() / values.len() as f64).sqrt()
}

/// Least-squares fit with one trim-and-refit pass.
pub fn fit_plane(samples: &[HeightSample]) -> Result<PlaneModel> {
    let ratio = check_geometry(samples)?;
    let mut coef = least_squares(samples);
    let res = residuals(coef, samples);
    let sigma = rms(&res);
    let kept: Vec<HeightSample> = samples
        .iter()
        .zip(&res)
        .filter(|(_, r)| r.abs() <= TRIM_SIGMAS * sigma)
        .map(|(s, _)| *s)
        .collect();
    let mut inliers = samples.len();
    let mut final_ratio = ratio;
    if kept.len() < samples.len() {
        if let Ok(r) = check_geometry(&kept) {
            coef = least_squares(&kept);
            inliers = kept.len();
            final_ratio = r;
        }
    }
    let used: &[HeightSample] = if inliers == samples.len() { samples } else { &kept };
    Ok(PlaneModel {
        a: coef[0],
        b: coef[1],
        c: coef[2],
        diagnostics: PlaneDiagnostics {
            samples: samples.len(),
            inliers,
            rms_residual: rms(&residuals(coef, used)),
            condition_ratio: final_ratio,
        },
    })
}

/// Predicted pixel height at `(x, y)`; non-positive heights are off-plane.
pub fn predict_height(model: &PlaneModel, x: f64, y: f64) -> Result<f64> {
    let height = model.evaluate(x, y);
    if !(height > 0.0) {
        return Err(Error::OffPlane { x, y, height });
    }
    Ok(height)
}

/// Scale to apply to a reference sprite observed at `reference` with pixel
/// height `observed` when it moves to `target`.
///
/// With `r = observed / h(reference)` and `h' = h(target)` the rescaled height
/// is `r·h'`, so the factor is `r·h' / observed = h' / h(reference)`.
pub fn relative_rescale(
    model: &PlaneModel,
    reference: (f64, f64),
    observed: f64,
    target: (f64, f64),
) -> Result<f64> {
    let h_ref = predict_height(model, reference.0, reference.1)?;
    let h_target = predict_height(model, target.0, target.1)?;
    let ratio = observed / h_ref;
    Ok(ratio * h_target / observed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Direct 3x3 normal-equations solve via Cramer's rule.
    fn normal_equations(samples: &[HeightSample]) -> [f64; 3] {
        let mut ata = [[0f64; 3]; 3];
        let mut atb = [0f64; 3];
        for s in samples {
            let row = [s.x, s.y, 1.0];
            for i in 0..3 {
                for j in 0..3 {
                    ata[i][j] += row[i] * row[j];
                }
                atb[i] += row[i] * s.h;
            }
        }
        let det3 = |m: [[f64; 3]; 3]| {
            m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
                - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
                + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
        };
        let d = det3(ata);
        std::array::from_fn(|k| {
            let mut m = ata;
            for i in 0..3 {
                m[i][k] = atb[i];
            }
            det3(m) / d
        })
    }

    fn exact_samples() -> Vec<HeightSample> {
        let pts = [
            (10.0, 20.0),
            (700.0, 15.0),
            (400.0, 300.0),
            (90.0, 500.0),
            (650.0, 580.0),
            (300.0, 120.0),
            (520.0, 410.0),
            (33.0, 640.0),
            (777.0, 250.0),
            (250.0, 333.0),
        ];
        pts.iter()
            .map(|&(x, y)| HeightSample {
                x,
                y,
                h: 0.02 * x - 0.45 * y + 320.0,
            })
            .collect()
    }

    #[test]
    fn recovers_exact_plane() {
        let m = fit_plane(&exact_samples()).unwrap();
        for (got, want) in m.coefficients().iter().zip([0.02, -0.45, 320.0]) {
            assert!(((got - want) / want).abs() < 1e-6, "{got} vs {want}");
        }
    }

    #[test]
    fn coincident_points_ill_conditioned() {
        let s = vec![HeightSample { x: 5.0, y: 5.0, h: 10.0 }; 6];
        assert!(matches!(fit_plane(&s), Err(Error::IllConditioned { .. })));
    }

    #[test]
    fn collinear_points_ill_conditioned() {
        let s: Vec<_> = (0..8)
            .map(|i| HeightSample { x: i as f64, y: 2.0 * i as f64, h: 50.0 + i as f64 })
            .collect();
        assert!(matches!(fit_plane(&s), Err(Error::IllConditioned { .. })));
    }

    #[test]
    fn too_few_samples() {
        let s = &exact_samples()[..2];
        assert!(matches!(fit_plane(s), Err(Error::InsufficientSamples { got: 2, .. })));
    }

    #[test]
    fn predictions() {
        let m = PlaneModel::from_coefficients(0.0, -0.5, 300.0);
        assert_eq!(predict_height(&m, 0.0, 200.0).unwrap(), 200.0);
        assert_eq!(predict_height(&m, 0.0, 400.0).unwrap(), 100.0);
        assert!(matches!(predict_height(&m, 0.0, 700.0), Err(Error::OffPlane { .. })));
    }

    #[test]
    fn rescale_laws() {
        let m = PlaneModel::from_coefficients(0.0, -0.5, 300.0);
        assert_eq!(relative_rescale(&m, (3.0, 200.0), 190.0, (3.0, 200.0)).unwrap(), 1.0);
        assert!((relative_rescale(&m, (0.0, 200.0), 210.0, (0.0, 400.0)).unwrap() - 0.5).abs() < 1e-12);
        assert!(relative_rescale(&m, (0.0, 200.0), 210.0, (0.0, 650.0)).is_err());
    }

    #[test]
    fn least_squares_matches_normal_equations() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let samples: Vec<_> = (0..150)
            .map(|_| {
                let x = rng.random_range(0.0..800.0);
                let y = rng.random_range(0.0..600.0);
                let h = (0.03 * x - 0.3 * y + 250.0) * rng.random_range(0.9..1.1);
                HeightSample { x, y, h }
            })
            .collect();
        let got = least_squares(&samples);
        let want = normal_equations(&samples);
        for k in 0..3 {
            assert!(((got[k] - want[k]) / want[k]).abs() < 1e-9, "{k}: {got:?} vs {want:?}");
        }
    }

    #[test]
    fn trimming_removes_gross_outliers() {
        let mut s = exact_samples();
        s.extend(exact_samples().iter().map(|p| HeightSample { h: p.h + 0.5, ..*p }));
        s.push(HeightSample { x: 400.0, y: 100.0, h: 20.0 });
        let m = fit_plane(&s).unwrap();
        assert_eq!(m.diagnostics.inliers, s.len() - 1);
        assert!((m.c - 320.25).abs() < 1e-6);
        let kept: Vec<_> = s[..s.len() - 1].to_vec();
        let oracle = normal_equations(&kept);
        for (got, want) in m.coefficients().iter().zip(oracle) {
            assert!(((got - want) / want).abs() < 1e-9);
        }
    }

    proptest! {
        #[test]
        fn rescale_is_path_independent(
            ay in 0f64..250.0, by in 0f64..250.0, cy in 0f64..250.0,
            ax in 0f64..800.0, bx in 0f64..800.0, cx in 0f64..800.0,
            observed in 20f64..300.0,
        ) {
            let m = PlaneModel::from_coefficients(0.01, -0.5, 300.0);
            let ac = relative_rescale(&m, (ax, ay), observed, (cx, cy)).unwrap();
            let ab = relative_rescale(&m, (ax, ay), observed, (bx, by)).unwrap();
            let bc = relative_rescale(&m, (bx, by), observed * ab, (cx, cy)).unwrap();
            prop_assert!((ac - ab * bc).abs() <= 1e-12 * ac.abs().max(1.0));
        }
    }
}
