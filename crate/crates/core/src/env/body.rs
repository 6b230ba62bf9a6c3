use nalgebra::{DMatrix, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SteapError};
use crate::state::MobileConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Link {
    Base,
    /// Arm link, 0-based from the base.
    Arm(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BodySphere {
    pub link: Link,
    /// Offset in the link frame; arm links point along their local x axis.
    pub offset: [f64; 2],
    pub radius: f64,
}

/// Sphere decomposition of a planar mobile base carrying a revolute chain mounted at its origin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BodyModel {
    pub spheres: Vec<BodySphere>,
    pub link_lengths: Vec<f64>,
    /// Drawn footprint `(length, width)` of the base.
    pub base_size: [f64; 2],
}

impl Default for BodyModel {
    fn default() -> Self {
        Self::planar_two_link()
    }
}

impl BodyModel {
    /// 1 m x 0.7 m base covered by four 0.35 m spheres, two 0.6 m links with three 0.08 m spheres each.
    pub fn planar_two_link() -> Self {
        let mut spheres = Vec::new();
        for &(x, y) in &[(0.25, 0.12), (0.25, -0.12), (-0.25, 0.12), (-0.25, -0.12)] {
            spheres.push(BodySphere {
                link: Link::Base,
                offset: [x, y],
                radius: 0.35,
            });
        }
        for link in 0..2 {
            for &s in &[0.2, 0.4, 0.6] {
                spheres.push(BodySphere {
                    link: Link::Arm(link),
                    offset: [s, 0.0],
                    radius: 0.08,
                });
            }
        }
        Self {
            spheres,
            link_lengths: vec![0.6, 0.6],
            base_size: [1.0, 0.7],
        }
    }

    pub fn dof(&self) -> usize {
        self.link_lengths.len()
    }

    pub fn validate(&self) -> Result<()> {
        for s in &self.spheres {
            if !(s.radius > 0.0) {
                return Err(SteapError::InvalidProblem(format!("sphere radius {}", s.radius)));
            }
            if let Link::Arm(k) = s.link {
                if k >= self.dof() {
                    return Err(SteapError::InvalidProblem(format!("sphere on missing link {k}")));
                }
            }
        }
        Ok(())
    }

    /// Furthest extent of any sphere from the base origin with the arm stretched out.
    pub fn max_reach(&self) -> f64 {
        let chain: f64 = self.link_lengths.iter().sum();
        self.spheres
            .iter()
            .map(|s| {
                let o = Vector2::new(s.offset[0], s.offset[1]);
                match s.link {
                    Link::Base => o.norm() + s.radius,
                    Link::Arm(_) => chain + o.y.abs() + s.radius,
                }
            })
            .fold(0.0, f64::max)
    }

    /// World-frame sphere centres.
    pub fn sphere_centres(&self, config: &MobileConfig) -> Result<Vec<Vector2<f64>>> {
        let base = config.base.ok_or_else(|| {
            SteapError::InvalidProblem("forward kinematics needs a planar base".into())
        })?;
        if config.arm.len() != self.dof() {
            return Err(SteapError::DimensionMismatch {
                expected: self.dof(),
                found: config.arm.len(),
            });
        }
        let mut joints = Vec::with_capacity(self.dof());
        let mut angle = 0.0;
        let mut origin = Vector2::zeros();
        for k in 0..self.dof() {
            angle += config.arm[k];
            joints.push((origin, angle));
            origin += rot(angle) * Vector2::new(self.link_lengths[k], 0.0);
        }
        let r = base.rotation();
        let t = base.translation();
        Ok(self
            .spheres
            .iter()
            .map(|s| {
                let off = Vector2::new(s.offset[0], s.offset[1]);
                let p = match s.link {
                    Link::Base => off,
                    Link::Arm(k) => joints[k].0 + rot(joints[k].1) * off,
                };
                r * p + t
            })
            .collect())
    }

    /// World-frame sphere centres and their `2 x (3 + n)` Jacobians w.r.t. the configuration tangent.
    pub fn forward_kinematics(
        &self,
        config: &MobileConfig,
    ) -> Result<(Vec<Vector2<f64>>, Vec<DMatrix<f64>>)> {
        let base = config.base.ok_or_else(|| {
            SteapError::InvalidProblem("forward kinematics needs a planar base".into())
        })?;
        if config.arm.len() != self.dof() {
            return Err(SteapError::DimensionMismatch {
                expected: self.dof(),
                found: config.arm.len(),
            });
        }
        let n = self.dof();
        // Joint origins and absolute link angles in the base frame.
        let mut joints = Vec::with_capacity(n);
        let mut angles = Vec::with_capacity(n);
        let mut origin = Vector2::zeros();
        let mut angle = 0.0;
        for k in 0..n {
            angle += config.arm[k];
            joints.push(origin);
            angles.push(angle);
            origin += rot(angle) * Vector2::new(self.link_lengths[k], 0.0);
        }

        let r = base.rotation();
        let t = base.translation();
        let mut centres = Vec::with_capacity(self.spheres.len());
        let mut jacs = Vec::with_capacity(self.spheres.len());
        for s in &self.spheres {
            let off = Vector2::new(s.offset[0], s.offset[1]);
            let mut j = DMatrix::zeros(2, 3 + n);
            let p = match s.link {
                Link::Base => off,
                Link::Arm(k) => {
                    let p = joints[k] + rot(angles[k]) * off;
                    for m in 0..=k {
                        let d = r * perp(&(p - joints[m]));
                        j[(0, 3 + m)] = d.x;
                        j[(1, 3 + m)] = d.y;
                    }
                    p
                }
            };
            let w = r * perp(&p);
            j[(0, 0)] = r[(0, 0)];
            j[(0, 1)] = r[(0, 1)];
            j[(1, 0)] = r[(1, 0)];
            j[(1, 1)] = r[(1, 1)];
            j[(0, 2)] = w.x;
            j[(1, 2)] = w.y;
            centres.push(r * p + t);
            jacs.push(j);
        }
        Ok((centres, jacs))
    }
}

fn rot(a: f64) -> nalgebra::Matrix2<f64> {
    let (s, c) = a.sin_cos();
    nalgebra::Matrix2::new(c, -s, s, c)
}

fn perp(v: &Vector2<f64>) -> Vector2<f64> {
    Vector2::new(-v.y, v.x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lie::Se2Pose;
    use crate::state::retract;
    use nalgebra::DVector;
    use rand::{RngExt, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn tip_at_full_reach() {
        let body = BodyModel::default();
        let (c, _) = body
            .forward_kinematics(&MobileConfig::from_slice(Se2Pose::identity(), &[0.0, 0.0]))
            .unwrap();
        let tip = c.last().unwrap();
        assert!((tip.x - 1.2).abs() < 1e-15 && tip.y.abs() < 1e-15);
    }

    #[test]
    fn translation_equivariance() {
        let body = BodyModel::default();
        let a = MobileConfig::from_slice(Se2Pose::new(0.0, 0.0, 0.4), &[0.3, -1.0]);
        let b = MobileConfig::from_slice(Se2Pose::new(1.0, 2.0, 0.4), &[0.3, -1.0]);
        let (ca, _) = body.forward_kinematics(&a).unwrap();
        let (cb, _) = body.forward_kinematics(&b).unwrap();
        for (p, q) in ca.iter().zip(&cb) {
            assert!((q - p - Vector2::new(1.0, 2.0)).amax() < 1e-12);
        }
    }

    #[test]
    fn base_spheres_cover_footprint() {
        let body = BodyModel::default();
        let [l, w] = body.base_size;
        for &(x, y) in &[(l / 2.0, w / 2.0), (-l / 2.0, w / 2.0), (0.0, w / 2.0), (l / 2.0, 0.0)] {
            let p = Vector2::new(x, y);
            let covered = body.spheres.iter().any(|s| {
                s.link == Link::Base && (p - Vector2::new(s.offset[0], s.offset[1])).norm() <= s.radius
            });
            assert!(covered, "({x}, {y})");
        }
    }

    #[test]
    fn jacobians_match_finite_differences() {
        let body = BodyModel::default();
        let mut rng = ChaCha8Rng::seed_from_u64(50);
        let h = 1e-6;
        for _ in 0..100 {
            let c = MobileConfig::from_slice(
                Se2Pose::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0), rng.random_range(-3.0..3.0)),
                &[rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)],
            );
            let (_, jacs) = body.forward_kinematics(&c).unwrap();
            for k in 0..5 {
                let mut d = DVector::zeros(5);
                d[k] = h;
                let (p, _) = body.forward_kinematics(&retract(&c, &d).unwrap()).unwrap();
                let (m, _) = body.forward_kinematics(&retract(&c, &-&d).unwrap()).unwrap();
                for s in 0..p.len() {
                    let fd = (p[s] - m[s]) / (2.0 * h);
                    let an = Vector2::new(jacs[s][(0, k)], jacs[s][(1, k)]);
                    assert!((fd - an).amax() <= 1e-6 * an.amax().max(1.0));
                }
            }
        }
    }

    #[test]
    fn rejects_wrong_dof() {
        let body = BodyModel::default();
        assert!(body
            .forward_kinematics(&MobileConfig::from_slice(Se2Pose::identity(), &[0.0]))
            .is_err());
        assert!((body.max_reach() - 1.28).abs() < 1e-12);
    }

    #[test]
    fn sphere_centres_match_forward_kinematics() {
        let body = BodyModel::default();
        let mut rng = ChaCha8Rng::seed_from_u64(51);
        for _ in 0..50 {
            let c = MobileConfig::from_slice(
                Se2Pose::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0), rng.random_range(-3.0..3.0)),
                &[rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)],
            );
            let (full, _) = body.forward_kinematics(&c).unwrap();
            let fast = body.sphere_centres(&c).unwrap();
            for (a, b) in full.iter().zip(&fast) {
                assert!((a - b).amax() < 1e-12);
            }
        }
    }
}
