use std::collections::HashSet;
use std::hash::Hash;

/// `|pred ∩ ref| / |pred|`, 0 for an empty prediction set.
pub fn precision<T: Eq + Hash>(pred: &HashSet<T>, reference: &HashSet<T>) -> f64 {
    ratio(hits(pred, reference), pred.len())
}

/// `|pred ∩ ref| / |ref|`, 0 for an empty reference set.
pub fn recall<T: Eq + Hash>(pred: &HashSet<T>, reference: &HashSet<T>) -> f64 {
    ratio(hits(pred, reference), reference.len())
}

/// Harmonic mean, 0 when both inputs are 0.
pub fn f1(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

pub(crate) fn hits<T: Eq + Hash>(pred: &HashSet<T>, reference: &HashSet<T>) -> usize {
    let (small, large) = if pred.len() <= reference.len() {
        (pred, reference)
    } else {
        (reference, pred)
    };
    small.iter().filter(|x| large.contains(x)).count()
}

pub(crate) fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn set(s: &str) -> HashSet<char> {
        s.chars().collect()
    }

    #[test]
    fn examples() {
        assert_eq!(precision(&set("ABCD"), &set("BDE")), 0.5);
        assert_eq!(recall(&set("ABCD"), &set("BDE")), 2.0 / 3.0);
        assert_eq!(precision(&set("AB"), &set("AB")), 1.0);
        assert_eq!(precision(&set(""), &set("AB")), 0.0);
        assert_eq!(recall(&set("ABC"), &set("AB")), 1.0);
        assert_eq!(recall(&set("A"), &set("B")), 0.0);
        assert_eq!(recall(&set("A"), &set("")), 0.0);
        assert!((f1(0.5, 2.0 / 3.0) - 4.0 / 7.0).abs() < 1e-12);
        assert_eq!(f1(0.3, 0.3), 0.3);
        assert_eq!(f1(0.0, 0.7), 0.0);
        assert_eq!(f1(0.0, 0.0), 0.0);
    }

    proptest! {
        #[test]
        fn bounds(pred in prop::collection::hash_set(0u8..30, 0..20), reference in prop::collection::hash_set(0u8..30, 0..20)) {
            let p = precision(&pred, &reference);
            let r = recall(&pred, &reference);
            prop_assert!((0.0..=1.0).contains(&p) && (0.0..=1.0).contains(&r));
            let f = f1(p, r);
            if p > 0.0 && r > 0.0 {
                prop_assert!(p.min(r) <= f + 1e-15 && f <= p.max(r) + 1e-15);
            }
            prop_assert!(f <= 2.0 * p.min(r) + 1e-15);
        }

        #[test]
        fn relabeling_invariance(pred in prop::collection::hash_set(0u8..30, 0..20), reference in prop::collection::hash_set(0u8..30, 0..20), shift in 0u8..=255) {
            let relabel = |s: &HashSet<u8>| s.iter().map(|x| x.wrapping_mul(3).wrapping_add(shift)).collect::<HashSet<u8>>();
            prop_assert_eq!(precision(&pred, &reference), precision(&relabel(&pred), &relabel(&reference)));
            prop_assert_eq!(recall(&pred, &reference), recall(&relabel(&pred), &relabel(&reference)));
        }
    }
}
