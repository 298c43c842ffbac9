//! Assigns anatomical identities (digit and joint type) to detections.

use serde::{Deserialize, Serialize};

use crate::anatomy::{self, JointClass, JointId};
use crate::detect::Detection;
use crate::error::{Error, Result};
use crate::raster::{LimbKind, LimbType};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Identity {
    Joint(JointId),
    Unidentified,
}

impl Identity {
    pub fn joint(&self) -> Option<JointId> {
        match self {
            Identity::Joint(j) => Some(*j),
            Identity::Unidentified => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum IdentifyPath {
    /// Detected class counts match the limb layout.
    Primary,
    /// Right total but wrong class counts; classes re-derived from rows.
    Backup,
    /// Fewer detections than the layout needs.
    Shortfall,
}

impl IdentifyPath {
    pub fn name(self) -> &'static str {
        match self {
            IdentifyPath::Primary => "primary",
            IdentifyPath::Backup => "backup",
            IdentifyPath::Shortfall => "shortfall",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Identified {
    pub detection: Detection,
    pub identity: Identity,
}

/// Total order on boxes by position, then confidence, so results do not
/// depend on input order.
fn by_position(a: &Detection, b: &Detection, key: impl Fn(&Detection) -> f64) -> std::cmp::Ordering {
    key(a)
        .total_cmp(&key(b))
        .then(a.bbox.cx.total_cmp(&b.bbox.cx))
        .then(a.bbox.cy.total_cmp(&b.bbox.cy))
        .then(a.confidence.total_cmp(&b.confidence))
}

/// Numbers a row of same-class joints 1..n from the thumb or great toe:
/// ascending x for right limbs, descending for left.
fn number_row(mut row: Vec<Detection>, class: JointClass, limb: LimbKind, out: &mut Vec<Identified>) {
    row.sort_by(|a, b| by_position(a, b, |d| d.bbox.cx));
    if limb.is_left() {
        row.reverse();
    }
    for (i, d) in row.into_iter().enumerate() {
        out.push(Identified {
            detection: d,
            identity: Identity::Joint(JointId::new(class, i as u8 + 1)),
        });
    }
}

/// Optimal 1-D two-means split of ascending values: the index `k` such that
/// `v[..k]` and `v[k..]` minimize the summed within-cluster squared error.
pub fn two_means_split(sorted: &[f64]) -> usize {
    let n = sorted.len();
    if n < 2 {
        return n;
    }
    let sse = |part: &[f64]| {
        let m = part.iter().sum::<f64>() / part.len() as f64;
        part.iter().map(|v| (v - m) * (v - m)).sum::<f64>()
    };
    (1..n)
        .map(|k| (k, sse(&sorted[..k]) + sse(&sorted[k..])))
        .fold((1, f64::INFINITY), |best, x| if x.1 < best.1 { x } else { best })
        .0
}

/// Distal row and proximal row for the backup path. Hands split by two-means
/// on `cy`; if that does not give five per row, the five boxes nearest the
/// fingertips form the PIP row. Feet take the single topmost box as PIP.
fn backup_rows(dets: &[Detection], limb: LimbType) -> (Vec<Detection>, Vec<Detection>) {
    let mut by_y = dets.to_vec();
    by_y.sort_by(|a, b| by_position(a, b, |d| d.bbox.cy));
    let pip_count = anatomy::layout(limb)[1].1;
    let split = match limb {
        LimbType::Hand => {
            let ys: Vec<f64> = by_y.iter().map(|d| d.bbox.cy).collect();
            let k = two_means_split(&ys);
            if k == pip_count {
                k
            } else {
                log::debug!("two-means row split gave {k}/{}; using rank split", ys.len() - k);
                pip_count
            }
        }
        LimbType::Foot => pip_count,
    };
    let proximal = by_y.split_off(split);
    (by_y, proximal)
}

/// Identifies detections of one limb. Needs exactly the layout's joint count
/// (10 hands, 6 feet) to assign identities; fewer gives all `Unidentified`.
pub fn identify_joints(dets: &[Detection], limb: LimbKind) -> Result<(Vec<Identified>, IdentifyPath)> {
    let lt = limb.limb_type();
    let k = anatomy::joint_count(lt);
    if dets.len() > k {
        return Err(Error::InvalidArgument(format!(
            "{} detections for a {} (at most {k})",
            dets.len(),
            lt.name()
        )));
    }
    if dets.len() < k {
        let mut out: Vec<Identified> = dets
            .iter()
            .map(|&d| Identified {
                detection: d,
                identity: Identity::Unidentified,
            })
            .collect();
        out.sort_by(|a, b| by_position(&a.detection, &b.detection, |d| d.bbox.cy));
        return Ok((out, IdentifyPath::Shortfall));
    }
    let [(proximal_class, _), (distal_class, _)] = anatomy::layout(lt);
    let counts_match = anatomy::layout(lt)
        .iter()
        .all(|&(class, n)| dets.iter().filter(|d| d.class == class).count() == n);
    let mut out = Vec::with_capacity(k);
    let path = if counts_match {
        for (class, _) in anatomy::layout(lt) {
            number_row(
                dets.iter().copied().filter(|d| d.class == class).collect(),
                class,
                limb,
                &mut out,
            );
        }
        IdentifyPath::Primary
    } else {
        let (distal, proximal) = backup_rows(dets, lt);
        let relabel = |row: Vec<Detection>, class| row.into_iter().map(|d| Detection { class, ..d }).collect();
        number_row(relabel(proximal, proximal_class), proximal_class, limb, &mut out);
        number_row(relabel(distal, distal_class), distal_class, limb, &mut out);
        IdentifyPath::Backup
    };
    Ok((out, path))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::BBoxNorm;
    use proptest::prelude::*;

    fn d(cx: f64, cy: f64, class: JointClass) -> Detection {
        Detection {
            bbox: BBoxNorm::new(cx, cy, 0.08, 0.08),
            class,
            confidence: 0.9,
        }
    }

    /// A right hand: PIP row near the top, MCP row below, thumb at small x.
    fn right_hand() -> Vec<Detection> {
        let xs = [0.18, 0.37, 0.5, 0.63, 0.76];
        let pip_y = [0.55, 0.41, 0.38, 0.40, 0.46];
        let mcp_y = [0.70, 0.62, 0.61, 0.62, 0.64];
        let mut v = Vec::new();
        for i in 0..5 {
            v.push(d(xs[i], pip_y[i], JointClass::Pip));
            v.push(d(xs[i], mcp_y[i], JointClass::Mcp));
        }
        v
    }

    fn mirror(v: &[Detection]) -> Vec<Detection> {
        v.iter()
            .map(|x| Detection {
                bbox: BBoxNorm {
                    cx: 1.0 - x.bbox.cx,
                    ..x.bbox
                },
                ..*x
            })
            .collect()
    }

    fn id_at(out: &[Identified], cx: f64, cy: f64) -> Identity {
        out.iter()
            .find(|i| (i.detection.bbox.cx - cx).abs() < 1e-12 && (i.detection.bbox.cy - cy).abs() < 1e-12)
            .unwrap()
            .identity
    }

    #[test]
    fn primary_right_hand_numbers_from_thumb() {
        let (out, path) = identify_joints(&right_hand(), LimbKind::HandRight).unwrap();
        assert_eq!(path, IdentifyPath::Primary);
        assert_eq!(
            id_at(&out, 0.18, 0.55),
            Identity::Joint(JointId::new(JointClass::Pip, 1))
        );
        assert_eq!(
            id_at(&out, 0.76, 0.64),
            Identity::Joint(JointId::new(JointClass::Mcp, 5))
        );
        assert_eq!(
            id_at(&out, 0.5, 0.61),
            Identity::Joint(JointId::new(JointClass::Mcp, 3))
        );
    }

    #[test]
    fn primary_left_hand_numbers_descending_x() {
        let (out, path) = identify_joints(&mirror(&right_hand()), LimbKind::HandLeft).unwrap();
        assert_eq!(path, IdentifyPath::Primary);
        assert_eq!(
            id_at(&out, 1.0 - 0.18, 0.55),
            Identity::Joint(JointId::new(JointClass::Pip, 1))
        );
        assert_eq!(
            id_at(&out, 1.0 - 0.76, 0.64),
            Identity::Joint(JointId::new(JointClass::Mcp, 5))
        );
    }

    #[test]
    fn backup_path_recovers_rows() {
        let mut dets = right_hand();
        // 6 PIP / 4 MCP by mistake
        let i = dets.iter().position(|x| x.class == JointClass::Mcp).unwrap();
        dets[i].class = JointClass::Pip;
        let (out, path) = identify_joints(&dets, LimbKind::HandRight).unwrap();
        assert_eq!(path, IdentifyPath::Backup);
        let (good, _) = identify_joints(&right_hand(), LimbKind::HandRight).unwrap();
        for g in &good {
            assert_eq!(id_at(&out, g.detection.bbox.cx, g.detection.bbox.cy), g.identity);
        }
    }

    #[test]
    fn backup_foot_takes_topmost_as_pip() {
        let mut dets = vec![d(0.27, 0.38, JointClass::Mtp)];
        for (x, y) in [(0.27, 0.58), (0.42, 0.56), (0.54, 0.57), (0.66, 0.59), (0.78, 0.61)] {
            dets.push(d(x, y, JointClass::Mtp));
        }
        let (out, path) = identify_joints(&dets, LimbKind::FootRight).unwrap();
        assert_eq!(path, IdentifyPath::Backup);
        assert_eq!(
            id_at(&out, 0.27, 0.38),
            Identity::Joint(JointId::new(JointClass::Pip, 1))
        );
        assert_eq!(
            id_at(&out, 0.27, 0.58),
            Identity::Joint(JointId::new(JointClass::Mtp, 1))
        );
        assert_eq!(
            id_at(&out, 0.78, 0.61),
            Identity::Joint(JointId::new(JointClass::Mtp, 5))
        );
    }

    #[test]
    fn shortfall_leaves_all_unidentified() {
        let dets = right_hand()[..8].to_vec();
        let (out, path) = identify_joints(&dets, LimbKind::HandRight).unwrap();
        assert_eq!(path, IdentifyPath::Shortfall);
        assert_eq!(out.len(), 8);
        assert!(out.iter().all(|i| i.identity == Identity::Unidentified));
        assert!(identify_joints(&[], LimbKind::FootLeft).unwrap().0.is_empty());
    }

    #[test]
    fn too_many_is_an_error() {
        let mut dets = right_hand();
        dets.push(d(0.9, 0.9, JointClass::Mcp));
        assert!(identify_joints(&dets, LimbKind::HandRight).is_err());
    }

    #[test]
    fn two_means_split_oracle() {
        assert_eq!(two_means_split(&[0.1, 0.12, 0.14, 0.6, 0.62]), 3);
        assert_eq!(two_means_split(&[1.0, 2.0]), 1);
        assert_eq!(two_means_split(&[5.0]), 1);
    }

    proptest! {
        #[test]
        fn primary_is_a_permutation_and_order_invariant(seed in any::<u64>(), left in any::<bool>()) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let base = if left { mirror(&right_hand()) } else { right_hand() };
            let limb = if left { LimbKind::HandLeft } else { LimbKind::HandRight };
            let mut shuffled = base.clone();
            shuffled.shuffle(&mut rng);
            let (a, pa) = identify_joints(&base, limb).unwrap();
            let (b, pb) = identify_joints(&shuffled, limb).unwrap();
            prop_assert_eq!(pa, IdentifyPath::Primary);
            prop_assert_eq!(pb, IdentifyPath::Primary);
            prop_assert_eq!(&a, &b);
            let mut ids: Vec<_> = a.iter().map(|i| i.identity.joint().unwrap()).collect();
            ids.sort();
            let mut want = anatomy::joints(LimbType::Hand);
            want.sort();
            prop_assert_eq!(ids, want);
        }
    }
}
