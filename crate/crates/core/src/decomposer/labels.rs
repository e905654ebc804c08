//! Binary piece labels and the four update cases.

use std::fmt;

use serde::{Deserialize, Serialize};

use super::DecomposeError;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Label(Vec<bool>);

impl Label {
    pub fn root() -> Self {
        Label(vec![false])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn is_prefix_of(&self, other: &Label) -> bool {
        other.0.starts_with(&self.0)
    }

    pub fn push(&mut self, bit: bool) {
        self.0.push(bit);
    }

    pub fn digit(&self, i: usize) -> bool {
        self.0[i]
    }
}

impl TryFrom<String> for Label {
    type Error = String;
    fn try_from(s: String) -> Result<Self, String> {
        s.parse()
    }
}

impl From<Label> for String {
    fn from(l: Label) -> String {
        l.to_string()
    }
}

impl std::str::FromStr for Label {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        s.chars()
            .map(|c| match c {
                '0' => Ok(false),
                '1' => Ok(true),
                _ => Err(format!("label digit {c:?} is not 0 or 1")),
            })
            .collect::<Result<Vec<_>, _>>()
            .map(Label)
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for b in &self.0 {
            f.write_str(if *b { "1" } else { "0" })?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LabelCase {
    I,
    II,
    III,
    IV,
}

/// New labels for the cubes `(Q, Q')` of a pair carrying `z` and `z_prime`.
pub fn apply_case(z: &Label, z_prime: &Label) -> (Label, Label, LabelCase) {
    let (mut a, mut b) = (z.clone(), z_prime.clone());
    if a.len() == b.len() {
        if a != b {
            return (a, b, LabelCase::I);
        }
        a.push(false);
        b.push(true);
        return (a, b, LabelCase::II);
    }
    // The longer label plays the role of z_1.
    let swap = a.len() < b.len();
    let (long, short) = if swap { (&b, &mut a) } else { (&a, &mut b) };
    if !short.is_prefix_of(long) {
        return (a, b, LabelCase::III);
    }
    let y = short.len();
    short.push(!long.digit(y));
    (a, b, LabelCase::IV)
}

/// Apply the update for a pair whose cubes hold the sample points `qa` and
/// `qb`. `None` marks a point already in the garbage set.
pub fn update_labels(labels: &mut [Option<Label>], qa: &[usize], qb: &[usize]) -> Result<LabelCase, DecomposeError> {
    let za = cube_label(labels, qa)?;
    let zb = cube_label(labels, qb)?;
    let (na, nb, case) = apply_case(&za, &zb);
    for &i in qa {
        labels[i] = Some(na.clone());
    }
    for &i in qb {
        labels[i] = Some(nb.clone());
    }
    Ok(case)
}

fn cube_label(labels: &[Option<Label>], pts: &[usize]) -> Result<Label, DecomposeError> {
    let first = pts
        .first()
        .and_then(|&i| labels.get(i).cloned().flatten())
        .ok_or(DecomposeError::LabelMissing)?;
    for &i in pts {
        match labels.get(i) {
            Some(Some(l)) if *l == first => {}
            Some(Some(_)) => return Err(DecomposeError::LabelNotConstant),
            _ => return Err(DecomposeError::LabelMissing),
        }
    }
    Ok(first)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn l(s: &str) -> Label {
        s.parse().unwrap()
    }

    #[test]
    fn cases() {
        assert_eq!(apply_case(&l("01"), &l("01")), (l("010"), l("011"), LabelCase::II));
        assert_eq!(apply_case(&l("01"), &l("10")), (l("01"), l("10"), LabelCase::I));
        assert_eq!(apply_case(&l("010"), &l("01")), (l("010"), l("011"), LabelCase::IV));
        assert_eq!(apply_case(&l("01"), &l("010")), (l("011"), l("010"), LabelCase::IV));
        assert_eq!(apply_case(&l("011"), &l("00")), (l("011"), l("00"), LabelCase::III));
    }

    #[test]
    fn update_requires_constant_labels() {
        let mut labels = vec![Some(l("0")), Some(l("0")), Some(l("1")), None];
        assert_eq!(update_labels(&mut labels, &[0], &[1]), Ok(LabelCase::II));
        assert_eq!(labels[0], Some(l("00")));
        assert_eq!(labels[1], Some(l("01")));
        assert_eq!(update_labels(&mut labels, &[0, 2], &[1]), Err(DecomposeError::LabelNotConstant));
        assert_eq!(update_labels(&mut labels, &[3], &[1]), Err(DecomposeError::LabelMissing));
        assert_eq!(update_labels(&mut labels, &[], &[1]), Err(DecomposeError::LabelMissing));
    }

    #[test]
    fn serde_as_digit_string() {
        let s = serde_json::to_string(&l("0110")).unwrap();
        assert_eq!(s, "\"0110\"");
        assert_eq!(serde_json::from_str::<Label>(&s).unwrap(), l("0110"));
        assert!(serde_json::from_str::<Label>("\"012\"").is_err());
    }

    fn label() -> impl Strategy<Value = Label> {
        proptest::collection::vec(any::<bool>(), 1..8).prop_map(Label)
    }

    proptest! {
        #[test]
        fn labels_only_grow_and_separate(a in label(), b in label()) {
            let (na, nb, case) = apply_case(&a, &b);
            prop_assert!(a.is_prefix_of(&na) && b.is_prefix_of(&nb));
            prop_assert!(na.len() <= a.len() + 1 && nb.len() <= b.len() + 1);
            // After the update neither label is a prefix of the other, so no
            // later extension can make them equal.
            prop_assert!(!na.is_prefix_of(&nb) && !nb.is_prefix_of(&na), "{case:?}");
        }
    }
}
