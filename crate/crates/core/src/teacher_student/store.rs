use std::fmt;

use crate::error::{bail, Result};
use crate::tensorkit::Tensor;

/// Default EMA momentum for the teacher.
pub const DEFAULT_EMA_MOMENTUM: f64 = 0.99;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Role {
    Student,
    Teacher,
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Role::Student => "student",
            Role::Teacher => "teacher",
        })
    }
}

/// Named parameter tensors in insertion order.
#[derive(Clone, Debug, PartialEq)]
pub struct ParameterStore {
    role: Role,
    entries: Vec<(String, Tensor)>,
}

impl ParameterStore {
    pub fn new(role: Role) -> Self {
        Self {
            role,
            entries: Vec::new(),
        }
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) {
        let name = name.into();
        match self.entries.iter_mut().find(|(n, _)| *n == name) {
            Some(slot) => slot.1 = value,
            None => self.entries.push((name, value)),
        }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.entries.iter_mut().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.entries.iter_mut().map(|(n, t)| (n.as_str(), t))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn parameter_count(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.len()).sum()
    }

    /// Exact copy under a different role (teacher initialization).
    pub fn clone_as(&self, role: Role) -> Self {
        Self {
            role,
            entries: self.entries.clone(),
        }
    }

    /// Order-sensitive hash of every value's bit pattern.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for (name, t) in &self.entries {
            for b in name.bytes() {
                h = (h ^ b as u64).wrapping_mul(0x100_0000_01b3);
            }
            for v in t.data() {
                h = (h ^ v.to_bits()).wrapping_mul(0x100_0000_01b3);
            }
        }
        h
    }

    /// Fails unless both stores hold the same names with the same shapes.
    pub fn check_compatible(&self, other: &ParameterStore) -> Result<()> {
        if self.entries.len() != other.entries.len() {
            bail!(Config, "stores hold {} vs {} entries", self.len(), other.len());
        }
        for ((a, ta), (b, tb)) in self.entries.iter().zip(&other.entries) {
            if a != b || ta.shape() != tb.shape() {
                bail!(Config, "entry {a} {:?} does not match {b} {:?}", ta.shape(), tb.shape());
            }
        }
        Ok(())
    }
}

/// `θ_t ← α·θ_t + (1 − α)·θ_s` for every entry.
pub fn ema_update(teacher: &mut ParameterStore, student: &ParameterStore, alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        bail!(Config, "EMA momentum {alpha} outside (0, 1)");
    }
    teacher.check_compatible(student)?;
    for ((_, t), (_, s)) in teacher.entries.iter_mut().zip(&student.entries) {
        for (tv, &sv) in t.data_mut().iter_mut().zip(s.data()) {
            *tv = alpha * *tv + (1.0 - alpha) * sv;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store(role: Role, v: f64) -> ParameterStore {
        let mut s = ParameterStore::new(role);
        s.insert("w", Tensor::full(&[2, 2], v));
        s.insert("b", Tensor::full(&[2], v));
        s
    }

    #[test]
    fn ema_examples() {
        let mut t = store(Role::Teacher, 1.0);
        let s = store(Role::Student, 0.0);
        ema_update(&mut t, &s, 0.99).unwrap();
        assert!(t.get("w").unwrap().data().iter().all(|&v| (v - 0.99).abs() < 1e-15));

        let mut t = store(Role::Teacher, 0.3);
        let before = t.clone();
        ema_update(&mut t, &store(Role::Student, 0.3), 0.99).unwrap();
        assert_eq!(t.get("b"), before.get("b"));
    }

    #[test]
    fn ema_rejects_mismatch() {
        let mut t = store(Role::Teacher, 1.0);
        let mut s = store(Role::Student, 0.0);
        s.insert("b", Tensor::zeros(&[3]));
        assert!(matches!(ema_update(&mut t, &s, 0.99), Err(crate::Error::Config(_))));
        assert!(ema_update(&mut t, &store(Role::Student, 0.0), 1.0).is_err());
    }

    #[test]
    fn ema_contracts_geometrically() {
        let alpha = 0.99;
        let mut t = store(Role::Teacher, 1.0);
        let s = store(Role::Student, -0.5);
        let mut gap = 1.5;
        for _ in 0..100 {
            ema_update(&mut t, &s, alpha).unwrap();
            gap *= alpha;
            for (_, v) in t.iter() {
                for &x in v.data() {
                    assert!(((x + 0.5) - gap).abs() <= 1e-12);
                }
            }
        }
    }

    #[test]
    fn checksum_tracks_values() {
        let a = store(Role::Student, 1.0);
        let mut b = a.clone();
        assert_eq!(a.checksum(), b.checksum());
        b.get_mut("w").unwrap().data_mut()[0] = 1.0 + 1e-15;
        assert_ne!(a.checksum(), b.checksum());
        assert_eq!(a.clone_as(Role::Teacher).role(), Role::Teacher);
    }
}
