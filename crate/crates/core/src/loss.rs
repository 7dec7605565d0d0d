//! Binary cross-entropy for multi-label and multi-task training.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::taxonomy::Category;
use crate::tensor::Tensor;

/// Binary targets with a mask selecting which positions count.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetMatrix {
    pub targets: Tensor,
    pub mask: Tensor,
}

impl TargetMatrix {
    /// Targets with every position masked in.
    pub fn full(targets: Tensor) -> Self {
        let mask = Tensor::full(targets.shape(), 1.0);
        Self { targets, mask }
    }

    pub fn new(targets: Tensor, mask: Tensor) -> Result<Self> {
        if targets.shape() != mask.shape() || targets.ndim() != 2 {
            return Err(Error::Shape(format!(
                "targets {:?} and mask {:?} must be equal (B, L) shapes",
                targets.shape(),
                mask.shape()
            )));
        }
        Ok(Self { targets, mask })
    }

    /// Masks out every column whose category is not `active`.
    pub fn masked_to(targets: Tensor, categories: &[Category], active: &[Category]) -> Result<Self> {
        let l = categories.len();
        if targets.ndim() != 2 || targets.dim(1) != l {
            return Err(Error::Shape(format!(
                "targets {:?} do not have {l} label columns",
                targets.shape()
            )));
        }
        let mut mask = Tensor::zeros(targets.shape());
        for row in mask.data_mut().chunks_mut(l.max(1)) {
            for (m, c) in row.iter_mut().zip(categories) {
                *m = if active.contains(c) { 1.0 } else { 0.0 };
            }
        }
        Ok(Self { targets, mask })
    }

    /// Selects the given columns.
    pub fn columns(&self, cols: &[usize]) -> TargetMatrix {
        TargetMatrix {
            targets: gather_columns(&self.targets, cols),
            mask: gather_columns(&self.mask, cols),
        }
    }

    /// Splits into one block per category, in [`Category::ALL`] order.
    pub fn split_by_category(&self, categories: &[Category]) -> Vec<TargetMatrix> {
        category_columns(categories).iter().map(|c| self.columns(c)).collect()
    }
}

/// Label ids of each category in [`Category::ALL`] order.
pub fn category_columns(categories: &[Category]) -> Vec<Vec<usize>> {
    Category::ALL
        .iter()
        .map(|c| {
            categories
                .iter()
                .enumerate()
                .filter(|(_, lc)| *lc == c)
                .map(|(i, _)| i)
                .collect()
        })
        .collect()
}

fn gather_columns(x: &Tensor, cols: &[usize]) -> Tensor {
    let (b, l) = (x.dim(0), x.dim(1));
    let mut out = Tensor::zeros(&[b, cols.len()]);
    for r in 0..b {
        for (j, &c) in cols.iter().enumerate() {
            out.data_mut()[r * cols.len() + j] = x.data()[r * l + c];
        }
    }
    out
}

/// Writes `block` into the given columns of `dst`.
pub fn scatter_columns(dst: &mut Tensor, block: &Tensor, cols: &[usize]) {
    let (b, l) = (dst.dim(0), dst.dim(1));
    for r in 0..b {
        for (j, &c) in cols.iter().enumerate() {
            dst.data_mut()[r * l + c] = block.data()[r * cols.len() + j];
        }
    }
}

/// `softplus(z) - y z`, stable for large `|z|`.
fn bce_term(z: f64, y: f64) -> f64 {
    z.max(0.0) - y * z + libm::log1p(libm::exp(-z.abs()))
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + libm::exp(-z))
    } else {
        let e = libm::exp(z);
        e / (1.0 + e)
    }
}

fn check(logits: &Tensor, t: &TargetMatrix) -> Result<()> {
    if logits.shape() != t.targets.shape() || logits.shape() != t.mask.shape() {
        return Err(Error::Shape(format!(
            "logits {:?} vs targets {:?} / mask {:?}",
            logits.shape(),
            t.targets.shape(),
            t.mask.shape()
        )));
    }
    Ok(())
}

/// Mean BCE over masked-in positions; 0 when nothing is masked in.
pub fn bce_loss(logits: &Tensor, targets: &TargetMatrix) -> Result<f64> {
    check(logits, targets)?;
    let mut sum = 0.0;
    let mut count = 0.0;
    for ((&z, &y), &m) in logits.data().iter().zip(targets.targets.data()).zip(targets.mask.data()) {
        if m != 0.0 {
            sum += m * bce_term(z, y);
            count += m;
        }
    }
    Ok(if count == 0.0 { 0.0 } else { sum / count })
}

/// [`bce_loss`] together with its gradient with respect to the logits.
pub fn bce_loss_with_grad(logits: &Tensor, targets: &TargetMatrix) -> Result<(f64, Tensor)> {
    let loss = bce_loss(logits, targets)?;
    let count: f64 = targets.mask.data().iter().sum();
    let mut grad = Tensor::zeros(logits.shape());
    if count > 0.0 {
        for (((g, &z), &y), &m) in grad
            .data_mut()
            .iter_mut()
            .zip(logits.data())
            .zip(targets.targets.data())
            .zip(targets.mask.data())
        {
            *g = m * (sigmoid(z) - y) / count;
        }
    }
    Ok((loss, grad))
}

fn check_heads(blocks: &[Tensor], targets: &[TargetMatrix], weights: &[f64]) -> Result<()> {
    if weights.len() != 6 {
        return Err(Error::InvalidTrainConfig(format!(
            "expected 6 head weights, got {}",
            weights.len()
        )));
    }
    if blocks.len() != 6 || targets.len() != 6 {
        return Err(Error::Shape(format!(
            "expected 6 logit and target blocks, got {} and {}",
            blocks.len(),
            targets.len()
        )));
    }
    Ok(())
}

/// Weighted mean `sum(w_c l_c) / sum(w_c)` of the six per-head BCE losses.
pub fn multi_task_loss(blocks: &[Tensor], targets: &[TargetMatrix], weights: &[f64]) -> Result<f64> {
    Ok(multi_task_loss_with_grad(blocks, targets, weights)?.0)
}

/// [`multi_task_loss`] and the gradient with respect to each block.
pub fn multi_task_loss_with_grad(
    blocks: &[Tensor],
    targets: &[TargetMatrix],
    weights: &[f64],
) -> Result<(f64, Vec<Tensor>)> {
    check_heads(blocks, targets, weights)?;
    let total: f64 = weights.iter().sum();
    let mut loss = 0.0;
    let mut grads = Vec::with_capacity(6);
    for ((z, t), &w) in blocks.iter().zip(targets).zip(weights) {
        let (l, mut g) = bce_loss_with_grad(z, t)?;
        if total > 0.0 {
            loss += w * l / total;
            g.scale(w / total);
        } else {
            g.scale(0.0);
        }
        grads.push(g);
    }
    Ok((loss, grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use proptest::prelude::*;

    fn t(shape: &[usize], v: &[f64]) -> Tensor {
        Tensor::from_vec(shape, v.to_vec()).unwrap()
    }

    #[test]
    fn zero_logits_give_ln2() {
        let z = Tensor::zeros(&[3, 4]);
        let y = t(&[3, 4], &[1., 0., 1., 1., 0., 0., 1., 0., 1., 1., 1., 0.]);
        let l = bce_loss(&z, &TargetMatrix::full(y)).unwrap();
        assert!((l - core::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn saturated_logits_do_not_overflow() {
        let l = bce_loss(&t(&[1, 1], &[100.0]), &TargetMatrix::full(t(&[1, 1], &[1.0]))).unwrap();
        assert!((0.0..1e-40).contains(&l));
        for z in [1e4, -1e4] {
            let l = bce_loss(&t(&[1, 1], &[z]), &TargetMatrix::full(t(&[1, 1], &[0.0]))).unwrap();
            assert!(l.is_finite());
        }
        let l = bce_loss(&t(&[1, 1], &[-1e4]), &TargetMatrix::full(t(&[1, 1], &[1.0]))).unwrap();
        assert!((l - 1e4).abs() < 1e-9);
    }

    #[test]
    fn hand_evaluated_pair() {
        let l = bce_loss(&t(&[1, 2], &[0.5, -0.5]), &TargetMatrix::full(t(&[1, 2], &[1.0, 0.0]))).unwrap();
        // Both positions contribute log(1 + e^{-0.5}).
        let expected = libm::log(1.0 + libm::exp(-0.5));
        assert!((l - expected).abs() < 1e-12);
        assert!((l - 0.474077).abs() < 1e-6);
    }

    #[test]
    fn empty_mask_gives_zero() {
        let tm = TargetMatrix::new(Tensor::full(&[2, 2], 1.0), Tensor::zeros(&[2, 2])).unwrap();
        assert_eq!(bce_loss(&Tensor::full(&[2, 2], -3.0), &tm).unwrap(), 0.0);
        let (_, g) = bce_loss_with_grad(&Tensor::full(&[2, 2], -3.0), &tm).unwrap();
        assert!(g.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let tm = TargetMatrix::full(Tensor::zeros(&[2, 3]));
        assert!(bce_loss(&Tensor::zeros(&[2, 2]), &tm).is_err());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let z = t(&[2, 3], &[0.3, -1.2, 2.0, 0.0, 4.0, -0.7]);
        let tm = TargetMatrix::new(
            t(&[2, 3], &[1., 0., 1., 0., 0., 1.]),
            t(&[2, 3], &[1., 1., 0., 1., 1., 1.]),
        )
        .unwrap();
        let (_, g) = bce_loss_with_grad(&z, &tm).unwrap();
        let h = 1e-6;
        for i in 0..z.len() {
            let mut zp = z.clone();
            zp.data_mut()[i] += h;
            let mut zm = z.clone();
            zm.data_mut()[i] -= h;
            let num = (bce_loss(&zp, &tm).unwrap() - bce_loss(&zm, &tm).unwrap()) / (2.0 * h);
            assert!((num - g.data()[i]).abs() < 1e-8);
        }
    }

    fn blocks_with_losses() -> (Vec<Tensor>, Vec<TargetMatrix>) {
        // A zero logit against any target costs ln 2; use that to build known
        // per-head values.
        let mut blocks = Vec::new();
        let mut targets = Vec::new();
        for i in 0..6 {
            blocks.push(Tensor::full(&[1, i + 1], 0.0));
            targets.push(TargetMatrix::full(Tensor::full(&[1, i + 1], 1.0)));
        }
        (blocks, targets)
    }

    #[test]
    fn weighted_mean_of_heads() {
        // Logit -ln(e^{0.5}-1) against target 1 costs exactly 0.5; logit
        // -ln(e-1) costs exactly 1.0; saturated heads cost about 0.
        let z05 = -libm::log(libm::exp(0.5) - 1.0);
        let z10 = -libm::log(core::f64::consts::E - 1.0);
        let mut blocks = vec![t(&[1, 1], &[z05]), t(&[1, 1], &[z10])];
        for _ in 0..4 {
            blocks.push(t(&[1, 1], &[1e4]));
        }
        let targets: Vec<_> = (0..6).map(|_| TargetMatrix::full(t(&[1, 1], &[1.0]))).collect();
        let l = multi_task_loss(&blocks, &targets, &[1., 1., 0., 0., 0., 0.]).unwrap();
        assert!((l - 0.75).abs() < 1e-12);
    }

    #[test]
    fn equal_losses_average_to_themselves() {
        let (blocks, targets) = blocks_with_losses();
        let l = multi_task_loss(&blocks, &targets, &[2.0; 6]).unwrap();
        assert!((l - core::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn wrong_weight_count_is_an_error() {
        let (blocks, targets) = blocks_with_losses();
        assert!(matches!(
            multi_task_loss(&blocks, &targets, &[1.0; 5]),
            Err(Error::InvalidTrainConfig(_))
        ));
    }

    #[test]
    fn zero_weight_head_is_ignored() {
        let (mut blocks, targets) = blocks_with_losses();
        let w = [1., 1., 0., 1., 1., 1.];
        let before = multi_task_loss(&blocks, &targets, &w).unwrap();
        blocks[2].data_mut().iter_mut().for_each(|v| *v = 37.0);
        let after = multi_task_loss(&blocks, &targets, &w).unwrap();
        assert_eq!(before, after);
        let (_, grads) = multi_task_loss_with_grad(&blocks, &targets, &w).unwrap();
        assert!(grads[2].data().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn equal_weights_give_plain_mean_of_heads() {
        let cats = [
            Category::Scene,
            Category::Action,
            Category::Action,
            Category::Object,
            Category::Concept,
        ];
        let z = t(&[2, 5], &[0.1, -2.0, 3.0, 0.5, -0.3, 1.1, 0.0, -1.0, 2.2, 0.7]);
        let y = t(&[2, 5], &[1., 0., 1., 0., 0., 1., 1., 0., 1., 1.]);
        let full = TargetMatrix::full(y);
        let cols = category_columns(&cats);
        let blocks: Vec<_> = cols.iter().map(|c| gather_columns(&z, c)).collect();
        let targets = full.split_by_category(&cats);
        let per_head: Vec<f64> = blocks
            .iter()
            .zip(&targets)
            .map(|(b, t)| bce_loss(b, t).unwrap())
            .collect();
        let l = multi_task_loss(&blocks, &targets, &[1.0; 6]).unwrap();
        assert!((l - per_head.iter().sum::<f64>() / 6.0).abs() < 1e-12);
    }

    #[test]
    fn activating_categories_grows_the_mask() {
        let cats = [Category::Scene, Category::Action, Category::Event, Category::Scene];
        let y = Tensor::zeros(&[2, 4]);
        let mut active = Vec::new();
        let mut previous = 0.0;
        for c in [Category::Action, Category::Scene, Category::Event] {
            active.push(c);
            let tm = TargetMatrix::masked_to(y.clone(), &cats, &active).unwrap();
            let n = tm.mask.sum();
            assert!(n > previous);
            previous = n;
        }
    }

    proptest! {
        #[test]
        fn column_permutation_leaves_loss_unchanged(
            vals in proptest::collection::vec((-20.0f64..20.0, 0u8..2, 0u8..2), 12),
            seed in any::<u64>(),
        ) {
            let z = t(&[3, 4], &vals.iter().map(|v| v.0).collect::<Vec<_>>());
            let y = t(&[3, 4], &vals.iter().map(|v| v.1 as f64).collect::<Vec<_>>());
            let m = t(&[3, 4], &vals.iter().map(|v| v.2 as f64).collect::<Vec<_>>());
            let tm = TargetMatrix::new(y, m).unwrap();
            let perm = crate::rng::permutation(&mut crate::rng::rng(seed), 4);
            let pz = gather_columns(&z, &perm);
            let ptm = tm.columns(&perm);
            let a = bce_loss(&z, &tm).unwrap();
            let b = bce_loss(&pz, &ptm).unwrap();
            prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
            prop_assert!(a >= 0.0);
        }
    }
}
