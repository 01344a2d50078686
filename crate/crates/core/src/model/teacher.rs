use crate::error::{Error, Result};
use crate::nn::{Real, SegNet};

/// `teacher ← α·teacher + (1−α)·student`, elementwise.
///
/// Evaluated as `t + (1−α)(s − t)` in `f64` so that equal inputs are a fixed
/// point and the result stays within `[min(t, s), max(t, s)]`.
pub fn ema_update<T: Real>(teacher: &mut [T], student: &[T], alpha: f64) -> Result<()> {
    if teacher.len() != student.len() {
        return Err(Error::contract(format!(
            "EMA over mismatched parameter sets ({} vs {})",
            teacher.len(),
            student.len()
        )));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::config(format!("EMA alpha {alpha} outside [0, 1]")));
    }
    if alpha == 0.0 {
        teacher.copy_from_slice(student);
        return Ok(());
    }
    let beta = 1.0 - alpha;
    for (t, &s) in teacher.iter_mut().zip(student) {
        let tv = t.to_f64();
        *t = T::from_f64(tv + beta * (s.to_f64() - tv));
    }
    Ok(())
}

/// Mean-teacher pair. Only the student is optimized; the teacher moves by EMA.
#[derive(Debug, Clone)]
pub struct TeacherStudentPair<T> {
    pub teacher: SegNet<T>,
    pub student: SegNet<T>,
    pub alpha: f64,
}

impl<T: Real> TeacherStudentPair<T> {
    /// Both networks start as copies of `init`.
    pub fn from_model(init: &SegNet<T>, alpha: f64) -> Self {
        TeacherStudentPair {
            teacher: init.clone(),
            student: init.clone(),
            alpha,
        }
    }

    pub fn ema_update(&mut self) -> Result<()> {
        if self.teacher.param_infos() != self.student.param_infos() {
            return Err(Error::contract("teacher and student architectures differ"));
        }
        ema_update(self.teacher.params_mut(), self.student.params(), self.alpha)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scalar_cases() {
        let mut t = [1.0f32];
        ema_update(&mut t, &[0.0], 0.99).unwrap();
        assert!((t[0] - 0.99).abs() < 1e-7);

        let mut t = [0.3f32, -2.0];
        ema_update(&mut t, &[0.3, -2.0], 0.99).unwrap();
        assert_eq!(t, [0.3, -2.0]);

        let mut t = [5.0f32, 1e10];
        ema_update(&mut t, &[1.0, 3.0], 0.0).unwrap();
        assert_eq!(t, [1.0, 3.0]);

        let mut t = [5.0f32];
        ema_update(&mut t, &[1.0], 1.0).unwrap();
        assert_eq!(t, [5.0]);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut t = [0.0f32; 2];
        assert!(matches!(ema_update(&mut t, &[0.0; 3], 0.5), Err(Error::Contract(_))));
    }
}
