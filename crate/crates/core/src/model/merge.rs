//! Merge-and-reduce fusion of the two branches.

use alloc::format;

use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::{
    join_path, relu_backward_in_place, relu_in_place, temporal_avg_pool, temporal_avg_pool_backward,
    BatchNorm, Conv3d, Module, NormCache, Param,
};
use crate::tensor::Tensor;

/// Concatenates two `C`-channel maps and reduces them back to `C` channels
/// with a 1x1x1 convolution, then applies batch normalisation (or a bias
/// when normalisation is off) and ReLU.
#[derive(Debug, Clone)]
pub struct MergeReduce {
    pub conv: Conv3d,
    pub norm: Option<BatchNorm>,
}

#[derive(Debug, Clone)]
pub struct MergeCache {
    /// Pooling factors applied to `a` and `b` before concatenation.
    factors: [usize; 2],
    channels: usize,
    concat: Tensor,
    norm: Option<NormCache>,
    out: Tensor,
}

impl MergeReduce {
    pub fn new<R: Rng>(channels: usize, with_norm: bool, rng: &mut R) -> Self {
        Self {
            conv: Conv3d::new(2 * channels, channels, [1, 1, 1], [1, 1, 1], [0, 0, 0], !with_norm, rng),
            norm: with_norm.then(|| BatchNorm::new(channels)),
        }
    }

    pub fn channels(&self) -> usize {
        self.conv.out_channels()
    }

    /// Pools the longer input in time to the shorter one's frame count and
    /// concatenates along channels.
    fn align_concat(&self, a: &Tensor, b: &Tensor) -> Result<([usize; 2], Tensor)> {
        let sa = a.dims5()?;
        let sb = b.dims5()?;
        let c = self.channels();
        if sa[1] != c || sb[1] != c {
            return Err(Error::Shape(format!(
                "merge expects {c} channels on both inputs, got {} and {}",
                sa[1], sb[1]
            )));
        }
        if sa[0] != sb[0] || sa[3..] != sb[3..] {
            return Err(Error::Shape(format!(
                "merge inputs disagree outside time: {:?} vs {:?}",
                sa, sb
            )));
        }
        let (ta, tb) = (sa[2], sb[2]);
        let t = ta.min(tb);
        if ta % t != 0 || tb % t != 0 {
            return Err(Error::Shape(format!(
                "merge cannot align {ta} and {tb} frames"
            )));
        }
        let factors = [ta / t, tb / t];
        let pa;
        let pb;
        let a = if factors[0] > 1 {
            pa = temporal_avg_pool(a, factors[0])?;
            &pa
        } else {
            a
        };
        let b = if factors[1] > 1 {
            pb = temporal_avg_pool(b, factors[1])?;
            &pb
        } else {
            b
        };
        Ok((factors, Tensor::concat_channels(a, b)?))
    }

    /// Training forward pass; normalisation uses batch statistics.
    pub fn forward(&self, a: &Tensor, b: &Tensor) -> Result<(Tensor, MergeCache)> {
        let (factors, concat) = self.align_concat(a, b)?;
        let z = self.conv.forward(&concat)?;
        let (mut y, norm) = match &self.norm {
            Some(n) => {
                let (y, cache) = n.forward(&z)?;
                (y, Some(cache))
            }
            None => (z, None),
        };
        relu_in_place(&mut y);
        Ok((
            y.clone(),
            MergeCache {
                factors,
                channels: self.channels(),
                concat,
                norm,
                out: y,
            },
        ))
    }

    /// Inference forward pass; normalisation uses running statistics.
    pub fn infer(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        let (_, concat) = self.align_concat(a, b)?;
        let z = self.conv.forward(&concat)?;
        let mut y = match &self.norm {
            Some(n) => n.infer(&z)?,
            None => z,
        };
        relu_in_place(&mut y);
        Ok(y)
    }

    /// Returns the gradients with respect to `a` and `b`.
    pub fn backward(&mut self, cache: &MergeCache, dy: &Tensor) -> Result<(Tensor, Tensor)> {
        let mut d = dy.clone();
        relu_backward_in_place(&mut d, &cache.out);
        if let (Some(n), Some(nc)) = (&mut self.norm, &cache.norm) {
            d = n.backward(nc, &d)?;
        }
        let dcat = self.conv.backward(&cache.concat, &d)?;
        let (mut da, mut db) = dcat.split_channels(cache.channels);
        if cache.factors[0] > 1 {
            da = temporal_avg_pool_backward(&da, cache.factors[0]);
        }
        if cache.factors[1] > 1 {
            db = temporal_avg_pool_backward(&db, cache.factors[1]);
        }
        Ok((da, db))
    }
}

impl Module for MergeReduce {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        self.conv.visit(&join_path(prefix, "conv"), f);
        if let Some(n) = &self.norm {
            n.visit(&join_path(prefix, "norm"), f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        self.conv.visit_mut(&join_path(prefix, "conv"), f);
        if let Some(n) = &mut self.norm {
            n.visit_mut(&join_path(prefix, "norm"), f);
        }
    }

    fn visit_buffers(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        if let Some(n) = &self.norm {
            n.visit_buffers(&join_path(prefix, "norm"), f);
        }
    }

    fn visit_buffers_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        if let Some(n) = &mut self.norm {
            n.visit_buffers_mut(&join_path(prefix, "norm"), f);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{normal, rng};

    fn random(shape: &[usize], seed: u64) -> Tensor {
        let mut r = rng(seed);
        let mut t = Tensor::zeros(shape);
        t.data_mut().iter_mut().for_each(|v| *v = normal(&mut r));
        t
    }

    #[test]
    fn reduces_concatenated_channels() {
        let m = MergeReduce::new(64, true, &mut rng(0));
        assert_eq!(m.conv.in_channels(), 128);
        let a = random(&[1, 64, 2, 3, 3], 1);
        let b = random(&[1, 64, 2, 3, 3], 2);
        let (y, _) = m.forward(&a, &b).unwrap();
        assert_eq!(y.shape(), &[1, 64, 2, 3, 3]);
        assert!(y.data().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn zero_inputs_give_zero_output() {
        let m = MergeReduce::new(4, true, &mut rng(0));
        let z = Tensor::zeros(&[2, 4, 2, 3, 3]);
        let (y, _) = m.forward(&z, &z).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
        let m = MergeReduce::new(4, false, &mut rng(0));
        let (y, _) = m.forward(&z, &z).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn longer_input_is_pooled_over_time() {
        let m = MergeReduce::new(2, false, &mut rng(3));
        let a = random(&[1, 2, 4, 2, 2], 4);
        let b = random(&[1, 2, 2, 2, 2], 5);
        let (y, _) = m.forward(&a, &b).unwrap();
        assert_eq!(y.shape(), &[1, 2, 2, 2, 2]);
        let pooled = temporal_avg_pool(&a, 2).unwrap();
        let (y2, _) = m.forward(&pooled, &b).unwrap();
        for (p, q) in y.data().iter().zip(y2.data()) {
            assert!((p - q).abs() < 1e-12);
        }
    }

    #[test]
    fn spatial_mismatch_is_rejected() {
        let m = MergeReduce::new(2, true, &mut rng(0));
        let a = Tensor::zeros(&[1, 2, 2, 3, 3]);
        let b = Tensor::zeros(&[1, 2, 2, 4, 4]);
        assert!(matches!(m.forward(&a, &b), Err(Error::Shape(_))));
        let c = Tensor::zeros(&[1, 3, 2, 3, 3]);
        assert!(m.forward(&a, &c).is_err());
    }

    /// Central differences on sum(output) with respect to every kernel entry.
    #[test]
    fn kernel_gradient_matches_finite_differences() {
        for with_norm in [false, true] {
            let mut m = MergeReduce::new(4, with_norm, &mut rng(11));
            // Shift the output so that few pre-activations sit on the ReLU kink.
            match (&mut m.conv.bias, &mut m.norm) {
                (Some(bias), _) => bias.value.fill(0.3),
                (None, Some(norm)) => norm.beta.value.fill(0.3),
                (None, None) => unreachable!(),
            }
            let a = random(&[1, 4, 2, 3, 3], 12);
            let b = random(&[1, 4, 2, 3, 3], 13);
            // A random linear read-out keeps the normalised variant non-trivial.
            let probe = random(&[1, 4, 2, 3, 3], 14);
            let objective = |m: &MergeReduce| -> f64 {
                let (y, _) = m.forward(&a, &b).unwrap();
                if with_norm {
                    y.data().iter().zip(probe.data()).map(|(p, q)| p * q).sum()
                } else {
                    y.sum()
                }
            };
            let (y, cache) = m.forward(&a, &b).unwrap();
            let dy = if with_norm {
                probe.clone()
            } else {
                Tensor::full(y.shape(), 1.0)
            };
            m.zero_grad();
            m.backward(&cache, &dy).unwrap();
            let analytic = m.conv.weight.grad.clone();
            let h = 1e-3;
            for i in 0..analytic.len() {
                let orig = m.conv.weight.value.data()[i];
                m.conv.weight.value.data_mut()[i] = orig + h;
                let fp = objective(&m);
                m.conv.weight.value.data_mut()[i] = orig - h;
                let fm = objective(&m);
                m.conv.weight.value.data_mut()[i] = orig;
                let numeric = (fp - fm) / (2.0 * h);
                let g = analytic.data()[i];
                let rel = (g - numeric).abs() / g.abs().max(numeric.abs()).max(1e-8);
                assert!(rel <= 1e-3, "weight {i}: analytic {g}, numeric {numeric}");
            }
        }
    }

    #[test]
    fn input_gradients_match_finite_differences() {
        let m = MergeReduce::new(2, true, &mut rng(21));
        let a = random(&[1, 2, 4, 2, 2], 22);
        let b = random(&[1, 2, 2, 2, 2], 23);
        let probe = random(&[1, 2, 2, 2, 2], 24);
        let f = |a: &Tensor, b: &Tensor| -> f64 {
            let (y, _) = m.forward(a, b).unwrap();
            y.data().iter().zip(probe.data()).map(|(p, q)| p * q).sum()
        };
        let (_, cache) = m.forward(&a, &b).unwrap();
        let mut mm = m.clone();
        let (da, db) = mm.backward(&cache, &probe).unwrap();
        let h = 1e-5;
        for (x, g, other_first) in [(&a, &da, true), (&b, &db, false)] {
            for i in 0..x.len() {
                let mut xp = x.clone();
                xp.data_mut()[i] += h;
                let mut xm = x.clone();
                xm.data_mut()[i] -= h;
                let (fp, fm) = if other_first {
                    (f(&xp, &b), f(&xm, &b))
                } else {
                    (f(&a, &xp), f(&a, &xm))
                };
                let numeric = (fp - fm) / (2.0 * h);
                assert!((g.data()[i] - numeric).abs() < 1e-6, "{i}: {} vs {numeric}", g.data()[i]);
            }
        }
    }
}
