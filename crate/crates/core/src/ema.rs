//! Exponential moving average of the student, used as the teacher.

use crate::error::{Error, Result};
use crate::tensor::ParamSet;

pub const DEFAULT_ALPHA: f64 = 0.998;

#[derive(Debug, Clone, PartialEq)]
pub struct EmaState {
    alpha: f64,
    teacher: ParamSet,
    step_count: u64,
    /// Student steps per teacher update.
    stride: u64,
    pending: u64,
}

impl EmaState {
    /// Teacher starts as an owned copy of `source`.
    pub fn init(source: &ParamSet, alpha: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::config("alpha", format!("must lie in [0, 1], got {alpha}")));
        }
        if !source.is_finite() {
            return Err(Error::Invalid("initial parameters are not finite".into()));
        }
        Ok(EmaState {
            alpha,
            teacher: source.clone(),
            step_count: 0,
            stride: 1,
            pending: 0,
        })
    }

    pub fn with_stride(mut self, stride: u64) -> Result<Self> {
        if stride == 0 {
            return Err(Error::config("ema_stride", "must be at least 1"));
        }
        self.stride = stride;
        Ok(self)
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn teacher(&self) -> &ParamSet {
        &self.teacher
    }

    /// Number of averaging updates applied so far.
    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    /// `t ← α·t + (1 − α)·s` for every tensor.
    pub fn update(&mut self, student: &ParamSet) -> Result<()> {
        self.teacher.ensure_same_structure(student)?;
        let a = self.alpha;
        for (name, t) in self.teacher.iter_mut() {
            let s = student.get(name).expect("structure checked");
            for (tv, sv) in t.data.iter_mut().zip(&s.data) {
                *tv = a * *tv + (1.0 - a) * sv;
            }
        }
        self.step_count += 1;
        Ok(())
    }

    /// Call once per student step; averages on every `stride`-th call.
    /// Returns whether an update happened.
    pub fn on_student_step(&mut self, student: &ParamSet) -> Result<bool> {
        self.pending += 1;
        if self.pending < self.stride {
            return Ok(false);
        }
        self.pending = 0;
        self.update(student)?;
        Ok(true)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;
    use proptest::prelude::*;

    fn params(v: &[f64]) -> ParamSet {
        let mut p = ParamSet::new();
        p.insert("w", Tensor::new(vec![v.len()], v.to_vec()).unwrap());
        p
    }

    #[test]
    fn init_copies() {
        let mut src = params(&[1.0, -2.5]);
        let ema = EmaState::init(&src, DEFAULT_ALPHA).unwrap();
        src.get_mut("w").unwrap().data[0] = 9.0;
        assert_eq!(ema.teacher(), &params(&[1.0, -2.5]));
        assert_eq!(ema.step_count(), 0);
        let empty = EmaState::init(&ParamSet::new(), 0.5).unwrap();
        assert!(empty.teacher().is_empty());
    }

    #[test]
    fn alpha_extremes() {
        let mut ema = EmaState::init(&params(&[1.0, 2.0]), 1.0).unwrap();
        ema.update(&params(&[5.0, 7.0])).unwrap();
        assert_eq!(ema.teacher(), &params(&[1.0, 2.0]));
        let mut ema = EmaState::init(&params(&[1.0, 2.0]), 0.0).unwrap();
        ema.update(&params(&[5.0, 7.0])).unwrap();
        assert_eq!(ema.teacher(), &params(&[5.0, 7.0]));
        assert_eq!(ema.step_count(), 1);
    }

    #[test]
    fn geometric_decay() {
        let mut ema = EmaState::init(&params(&[1.0]), 0.998).unwrap();
        let zero = params(&[0.0]);
        ema.update(&zero).unwrap();
        assert_eq!(ema.teacher().get("w").unwrap().data[0], 0.998);
        for n in 2..=500 {
            ema.update(&zero).unwrap();
            let want = 0.998f64.powi(n);
            assert!((ema.teacher().get("w").unwrap().data[0] - want).abs() <= 1e-9 * want);
        }
    }

    #[test]
    fn mismatch_lists_offenders() {
        let mut ema = EmaState::init(&params(&[1.0]), 0.9).unwrap();
        let mut other = params(&[1.0, 2.0]);
        other.insert("extra", Tensor::zeros(vec![1]));
        let msg = ema.update(&other).unwrap_err().to_string();
        assert!(msg.contains("`w`") && msg.contains("`extra`"), "{msg}");
        assert!(EmaState::init(&params(&[1.0]), 1.5).is_err());
    }

    #[test]
    fn stride_delays_updates() {
        let mut ema = EmaState::init(&params(&[1.0]), 0.5).unwrap().with_stride(3).unwrap();
        let s = params(&[0.0]);
        assert!(!ema.on_student_step(&s).unwrap());
        assert!(!ema.on_student_step(&s).unwrap());
        assert!(ema.on_student_step(&s).unwrap());
        assert_eq!(ema.teacher(), &params(&[0.5]));
    }

    proptest! {
        #[test]
        fn update_is_affine(
            t in prop::collection::vec(-10.0f64..10.0, 3),
            s1 in prop::collection::vec(-10.0f64..10.0, 3),
            s2 in prop::collection::vec(-10.0f64..10.0, 3),
            alpha in 0.0f64..=1.0,
        ) {
            let mid: Vec<f64> = s1.iter().zip(&s2).map(|(a, b)| (a + b) / 2.0).collect();
            let run = |s: &[f64]| {
                let mut e = EmaState::init(&params(&t), alpha).unwrap();
                e.update(&params(s)).unwrap();
                e.teacher().get("w").unwrap().data.clone()
            };
            let (a, b, m) = (run(&s1), run(&s2), run(&mid));
            for i in 0..3 {
                prop_assert!((m[i] - (a[i] + b[i]) / 2.0).abs() < 1e-12);
            }
        }

        #[test]
        fn converges_to_constant_student(t0 in -5.0f64..5.0, s in -5.0f64..5.0, alpha in 0.5f64..1.0) {
            let mut e = EmaState::init(&params(&[t0]), alpha).unwrap();
            for n in 1..=50 {
                e.update(&params(&[s])).unwrap();
                let got = (e.teacher().get("w").unwrap().data[0] - s).abs();
                let want = alpha.powi(n) * (t0 - s).abs();
                prop_assert!((got - want).abs() < 1e-9);
            }
        }
    }
}
