//! Grad-CAM, PCA-Grad-CAM and SVM-Grad-CAM heatmaps built from a
//! [`JacobianBundle`].
//!
//! Component and class indices (`b`, `c`) are 1-based, matching the file
//! names the CLI writes (`pca_b1_plus`, `class_c1`, ...).

use std::fmt;

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};
use crate::jacobian::JacobianBundle;
use crate::types::FeatureStack;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CamSign {
    Unsigned,
    Plus,
    Minus,
}

impl fmt::Display for CamSign {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(match self {
            CamSign::Unsigned => "unsigned",
            CamSign::Plus => "plus",
            CamSign::Minus => "minus",
        })
    }
}

/// An `M x N` heatmap with the color-bar maximum used to render it.
#[derive(Debug, Clone, PartialEq)]
pub struct CamMap {
    pub values: Array2<f64>,
    pub sign: CamSign,
    pub component: Option<usize>,
    pub color_max: f64,
}

impl CamMap {
    /// A map whose color bar tops out at its own largest entry (floored at 0).
    pub fn unsigned(values: Array2<f64>) -> Self {
        let color_max = max_entry(&values).max(0.0);
        Self {
            values,
            sign: CamSign::Unsigned,
            component: None,
            color_max,
        }
    }

    pub fn rows(&self) -> usize {
        self.values.nrows()
    }

    pub fn cols(&self) -> usize {
        self.values.ncols()
    }
}

fn max_entry(m: &Array2<f64>) -> f64 {
    m.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

pub fn relu(m: &Array2<f64>) -> Array2<f64> {
    m.mapv(|v| v.max(0.0))
}

/// Per-map weights: entry `t` is the sum of row `row` (0-based) of `jacobians[t]`.
pub fn map_weights(jacobians: &[Array2<f64>], row: usize) -> Result<Array1<f64>> {
    jacobians
        .iter()
        .map(|j| {
            if row >= j.nrows() {
                return Err(Error::Index {
                    what: "Jacobian row",
                    index: row,
                    valid: format!("0..{}", j.nrows()),
                });
            }
            Ok(j.row(row).sum())
        })
        .collect()
}

/// `sum_t weights[t] * F^t`.
pub fn weighted_combination(weights: &Array1<f64>, stack: &FeatureStack) -> Result<Array2<f64>> {
    if weights.len() != stack.count() {
        return Err(Error::shape("map weights", stack.count(), weights.len()));
    }
    let mut out = Array2::zeros((stack.rows(), stack.cols()));
    for (w, map) in weights.iter().zip(stack.maps()) {
        out.scaled_add(*w, map);
    }
    Ok(out)
}

fn check_maps<T>(blocks: &[T], stack: &FeatureStack) -> Result<()> {
    if blocks.len() != stack.count() {
        return Err(Error::shape("Jacobian blocks per feature map", stack.count(), blocks.len()));
    }
    Ok(())
}

/// `G_c = Relu(sum_t a_c^t F^t)` for class `c` (1-based).
pub fn conventional_grad_cam(bundle: &JacobianBundle, stack: &FeatureStack, class: usize) -> Result<CamMap> {
    let blocks = bundle.per_map_class.as_ref().ok_or(Error::MissingJacobians("class"))?;
    check_maps(blocks, stack)?;
    let classes = blocks.first().map_or(0, |b| b.nrows());
    if class == 0 || class > classes {
        return Err(Error::Index {
            what: "class",
            index: class,
            valid: format!("1..={classes}"),
        });
    }
    let weights = map_weights(blocks, class - 1)?;
    Ok(CamMap::unsigned(relu(&weighted_combination(&weights, stack)?)))
}

/// The signed PCA-Grad-CAM `P_b = sum_t e_b^t F^t` for component `b` (1-based).
pub fn signed_pca_map(bundle: &JacobianBundle, stack: &FeatureStack, component: usize) -> Result<Array2<f64>> {
    let blocks = bundle.per_map_pca.as_ref().ok_or(Error::MissingJacobians("PCA"))?;
    check_maps(blocks, stack)?;
    let count = blocks.first().map_or(0, |b| b.nrows());
    if component == 0 || component > count {
        return Err(Error::Index {
            what: "principal component",
            index: component,
            valid: format!("1..={count}"),
        });
    }
    let weights = map_weights(blocks, component - 1)?;
    weighted_combination(&weights, stack)
}

/// Splits a signed map into `(Relu(P), Relu(-P))`, both carrying
/// `nu = max(max Relu(P), max Relu(-P))`.
pub fn split_signed(signed: &Array2<f64>, component: Option<usize>) -> (CamMap, CamMap) {
    let plus = relu(signed);
    let minus = signed.mapv(|v| (-v).max(0.0));
    let nu = max_entry(&plus).max(max_entry(&minus)).max(0.0);
    (
        CamMap {
            values: plus,
            sign: CamSign::Plus,
            component,
            color_max: nu,
        },
        CamMap {
            values: minus,
            sign: CamSign::Minus,
            component,
            color_max: nu,
        },
    )
}

/// `(P_b^+, P_b^-)` for component `b` (1-based).
pub fn pca_grad_cam(bundle: &JacobianBundle, stack: &FeatureStack, component: usize) -> Result<(CamMap, CamMap)> {
    let signed = signed_pca_map(bundle, stack, component)?;
    Ok(split_signed(&signed, Some(component)))
}

/// `S = Relu(sum_t s^t F^t)`.
pub fn svm_grad_cam(bundle: &JacobianBundle, stack: &FeatureStack) -> Result<CamMap> {
    let rows = bundle.per_map_svm.as_ref().ok_or(Error::MissingJacobians("SVM"))?;
    check_maps(rows, stack)?;
    let weights: Array1<f64> = rows.iter().map(|r| r.sum()).collect();
    Ok(CamMap::unsigned(relu(&weighted_combination(&weights, stack)?)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Upsample {
    Nearest,
    Bilinear,
}

/// Enlarges a map to `rows x cols`. Bilinear sampling aligns the corner
/// pixels of source and target.
pub fn upsample(map: &Array2<f64>, rows: usize, cols: usize, mode: Upsample) -> Result<Array2<f64>> {
    let (m, n) = map.dim();
    if rows < m || cols < n {
        return Err(Error::Unsupported(format!(
            "cannot shrink a {m}x{n} map to {rows}x{cols}"
        )));
    }
    Ok(match mode {
        Upsample::Nearest => Array2::from_shape_fn((rows, cols), |(i, j)| map[[i * m / rows, j * n / cols]]),
        Upsample::Bilinear => {
            let coord = |k: usize, src: usize, dst: usize| -> (usize, usize, f64) {
                if dst <= 1 || src <= 1 {
                    return (0, 0, 0.0);
                }
                let pos = k as f64 * (src - 1) as f64 / (dst - 1) as f64;
                let lo = (pos.floor() as usize).min(src - 1);
                let hi = (lo + 1).min(src - 1);
                (lo, hi, pos - lo as f64)
            };
            Array2::from_shape_fn((rows, cols), |(i, j)| {
                let (r0, r1, fr) = coord(i, m, rows);
                let (c0, c1, fc) = coord(j, n, cols);
                let top = map[[r0, c0]] * (1.0 - fc) + map[[r0, c1]] * fc;
                let bottom = map[[r1, c0]] * (1.0 - fc) + map[[r1, c1]] * fc;
                top * (1.0 - fr) + bottom * fr
            })
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    fn stack_of(maps: Vec<Array2<f64>>) -> FeatureStack {
        FeatureStack::new(maps).unwrap()
    }

    fn pca_bundle(blocks: Vec<Array2<f64>>) -> JacobianBundle {
        JacobianBundle {
            per_map_pca: Some(blocks),
            ..Default::default()
        }
    }

    #[test]
    fn weights_sum_rows() {
        let ones = vec![Array2::<f64>::ones((3, 4)); 2];
        assert_eq!(map_weights(&ones, 0).unwrap(), array![4.0, 4.0]);
        let zeros = vec![Array2::<f64>::zeros((3, 4)); 2];
        assert_eq!(map_weights(&zeros, 2).unwrap(), array![0.0, 0.0]);
        assert!(map_weights(&ones, 3).is_err());

        let blocks = vec![
            array![[0.5, -1.0, 2.0], [3.0, 0.25, -0.75]],
            array![[1.5, 1.5, -4.0], [0.0, 0.125, 1.0]],
        ];
        for row in 0..2 {
            let got = map_weights(&blocks, row).unwrap();
            for t in 0..2 {
                let mut acc = 0.0;
                for i in 0..3 {
                    acc += blocks[t][[row, i]];
                }
                assert_eq!(got[t], acc);
            }
        }
    }

    #[test]
    fn combination_cases() {
        let stack = stack_of(vec![Array2::ones((2, 2)), Array2::from_elem((2, 2), 2.0)]);
        assert_eq!(
            weighted_combination(&array![1.0, -1.0], &stack).unwrap(),
            Array2::from_elem((2, 2), -1.0)
        );
        let single = array![[1.0, 2.0], [3.0, 4.0]];
        assert_eq!(
            weighted_combination(&array![1.0], &stack_of(vec![single.clone()])).unwrap(),
            single
        );
        assert!(weighted_combination(&array![1.0], &stack).is_err());

        let maps = vec![
            array![[0.5, 1.0, -2.0], [3.0, 0.0, 1.0]],
            array![[2.0, -1.0, 0.25], [1.0, 1.0, -3.0]],
            array![[0.0, 4.0, 1.0], [-1.0, 2.0, 0.5]],
        ];
        let w = array![0.3, -1.2, 2.0];
        let got = weighted_combination(&w, &stack_of(maps.clone())).unwrap();
        for m in 0..2 {
            for n in 0..3 {
                let mut acc = 0.0;
                for t in 0..3 {
                    acc += w[t] * maps[t][[m, n]];
                }
                assert!((got[[m, n]] - acc).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn conventional_clips_negatives() {
        let stack = stack_of(vec![Array2::ones((2, 2)), Array2::from_elem((2, 2), 2.0)]);
        let bundle = JacobianBundle {
            per_map_class: Some(vec![array![[0.5, 0.5, 0.0, 0.0]], array![[-0.5, -0.5, 0.0, 0.0]]]),
            ..Default::default()
        };
        let cam = conventional_grad_cam(&bundle, &stack, 1).unwrap();
        assert_eq!(cam.values, Array2::<f64>::zeros((2, 2)));
        assert_eq!(cam.color_max, 0.0);
        assert!(conventional_grad_cam(&bundle, &stack, 2).is_err());
        assert!(matches!(
            conventional_grad_cam(&JacobianBundle::default(), &stack, 1),
            Err(Error::MissingJacobians(_))
        ));

        let bundle = JacobianBundle {
            per_map_class: Some(vec![array![[0.25, 0.25, 0.5, 0.0]], array![[1.0, 0.0, 0.0, 0.0]]]),
            ..Default::default()
        };
        let cam = conventional_grad_cam(&bundle, &stack, 1).unwrap();
        assert_eq!(cam.values, Array2::from_elem((2, 2), 3.0));
        assert_eq!(cam.sign, CamSign::Unsigned);
        assert_eq!(cam.color_max, 3.0);
    }

    #[test]
    fn split_example() {
        let (plus, minus) = split_signed(&array![[1.0, -2.0], [0.0, 3.0]], Some(1));
        assert_eq!(plus.values, array![[1.0, 0.0], [0.0, 3.0]]);
        assert_eq!(minus.values, array![[0.0, 2.0], [0.0, 0.0]]);
        assert_eq!(plus.color_max, 3.0);
        assert_eq!(minus.color_max, 3.0);

        let (plus, minus) = split_signed(&array![[-1.0, -5.0]], None);
        assert_eq!(plus.values, array![[0.0, 0.0]]);
        assert_eq!(minus.color_max, 5.0);
        assert_eq!(plus.color_max, 5.0);
    }

    #[test]
    fn pca_cam_index_checks() {
        let stack = stack_of(vec![Array2::ones((1, 2))]);
        let bundle = pca_bundle(vec![array![[1.0, 1.0], [2.0, -3.0]]]);
        assert!(pca_grad_cam(&bundle, &stack, 0).is_err());
        assert!(pca_grad_cam(&bundle, &stack, 3).is_err());
        let (plus, minus) = pca_grad_cam(&bundle, &stack, 2).unwrap();
        assert_eq!(plus.values, array![[0.0, 0.0]]);
        assert_eq!(minus.values, array![[1.0, 1.0]]);
        assert_eq!(plus.component, Some(2));
    }

    #[test]
    fn svm_cam_cases() {
        let stack = stack_of(vec![array![[1.0, 2.0]], array![[3.0, -1.0]]]);
        let zero = JacobianBundle {
            per_map_svm: Some(vec![Array1::zeros(2), Array1::zeros(2)]),
            ..Default::default()
        };
        assert_eq!(svm_grad_cam(&zero, &stack).unwrap().values, Array2::<f64>::zeros((1, 2)));
        assert!(matches!(
            svm_grad_cam(&JacobianBundle::default(), &stack),
            Err(Error::MissingJacobians(_))
        ));
    }

    #[test]
    fn upsample_cases() {
        let one = upsample(&array![[5.0]], 3, 4, Upsample::Bilinear).unwrap();
        assert_eq!(one, Array2::from_elem((3, 4), 5.0));
        let one = upsample(&array![[5.0]], 3, 4, Upsample::Nearest).unwrap();
        assert_eq!(one, Array2::from_elem((3, 4), 5.0));

        let corners = array![[1.0, 0.0], [0.0, 1.0]];
        let big = upsample(&corners, 4, 4, Upsample::Nearest).unwrap();
        assert_eq!(
            big,
            array![
                [1.0, 1.0, 0.0, 0.0],
                [1.0, 1.0, 0.0, 0.0],
                [0.0, 0.0, 1.0, 1.0],
                [0.0, 0.0, 1.0, 1.0]
            ]
        );

        let ramp = upsample(&array![[0.0, 1.0], [0.0, 1.0]], 2, 3, Upsample::Bilinear).unwrap();
        assert_eq!(ramp, array![[0.0, 0.5, 1.0], [0.0, 0.5, 1.0]]);

        assert!(matches!(
            upsample(&corners, 1, 4, Upsample::Nearest),
            Err(Error::Unsupported(_))
        ));
    }

    fn small_matrix(rows: usize, cols: usize) -> impl Strategy<Value = Array2<f64>> {
        proptest::collection::vec(-5.0f64..5.0, rows * cols)
            .prop_map(move |v| Array2::from_shape_vec((rows, cols), v).unwrap())
    }

    proptest! {
        #[test]
        fn split_invariants(signed in small_matrix(3, 4)) {
            let (plus, minus) = split_signed(&signed, Some(1));
            prop_assert_eq!(&plus.values - &minus.values, signed.clone());
            for (a, b) in plus.values.iter().zip(minus.values.iter()) {
                prop_assert!(*a >= 0.0 && *b >= 0.0);
                prop_assert_eq!(a.min(*b), 0.0);
            }
            let nu = plus.values.iter().chain(minus.values.iter()).cloned().fold(0.0, f64::max);
            prop_assert_eq!(plus.color_max, nu);
            prop_assert_eq!(minus.color_max, nu);
        }

        #[test]
        fn bilinear_stays_in_range(map in small_matrix(2, 3), extra_r in 0usize..5, extra_c in 0usize..5) {
            let out = upsample(&map, 2 + extra_r, 3 + extra_c, Upsample::Bilinear).unwrap();
            let lo = map.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = map.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            for v in out.iter() {
                prop_assert!(*v >= lo - 1e-12 && *v <= hi + 1e-12);
            }
            let near = upsample(&map, 2 + extra_r, 3 + extra_c, Upsample::Nearest).unwrap();
            for v in near.iter() {
                prop_assert!(map.iter().any(|m| m == v));
            }
        }

        #[test]
        fn cams_scale_with_feature_maps(
            maps in proptest::collection::vec(small_matrix(2, 2), 2),
            jac in proptest::collection::vec(small_matrix(2, 4), 2),
            k in 0.1f64..10.0,
        ) {
            let stack = stack_of(maps);
            let rows: Vec<Array1<f64>> = jac.iter().map(|j| j.row(0).to_owned()).collect();
            let bundle = JacobianBundle {
                per_map_pca: Some(jac.clone()),
                per_map_svm: Some(rows),
                per_map_class: Some(jac),
                ..Default::default()
            };
            let scaled = stack.scaled(k);
            let close = |a: &Array2<f64>, b: &Array2<f64>| a.iter().zip(b.iter()).all(|(x, y)| (x - y).abs() <= 1e-9 * (1.0 + y.abs()));
            let s0 = svm_grad_cam(&bundle, &stack).unwrap().values * k;
            prop_assert!(close(&svm_grad_cam(&bundle, &scaled).unwrap().values, &s0));
            let g0 = conventional_grad_cam(&bundle, &stack, 2).unwrap().values * k;
            prop_assert!(close(&conventional_grad_cam(&bundle, &scaled, 2).unwrap().values, &g0));
            let (p0, m0) = pca_grad_cam(&bundle, &stack, 1).unwrap();
            let (p1, m1) = pca_grad_cam(&bundle, &scaled, 1).unwrap();
            prop_assert!(close(&p1.values, &(p0.values * k)));
            prop_assert!(close(&m1.values, &(m0.values * k)));
        }
    }
}
