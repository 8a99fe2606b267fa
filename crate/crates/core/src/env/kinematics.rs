use std::f64::consts::PI;

pub type Point3 = [f64; 3];

/// Wraps an angle into `(−π, π]`.
pub fn wrap_angle(a: f64) -> f64 {
    if a > -PI && a <= PI {
        return a;
    }
    let x = (a + PI).rem_euclid(2.0 * PI) - PI;
    if x <= -PI {
        PI
    } else {
        x
    }
}

/// Positions of the base and every link end, base first, effector last.
///
/// Joint 0 is a yaw about the vertical axis; the remaining joints pitch the
/// planar links in the vertical plane selected by the yaw. All-zero angles
/// stretch the arm along `+x`.
pub fn link_chain(link_lengths: &[f64], joint_angles: &[f64]) -> Vec<Point3> {
    assert_eq!(
        joint_angles.len(),
        link_lengths.len() + 1,
        "one yaw joint plus one pitch joint per link"
    );
    let (sy, cy) = joint_angles[0].sin_cos();
    let mut points = Vec::with_capacity(link_lengths.len() + 1);
    points.push([0.0; 3]);
    let (mut reach, mut height, mut pitch) = (0.0, 0.0, 0.0);
    for (len, angle) in link_lengths.iter().zip(&joint_angles[1..]) {
        pitch += angle;
        let (sp, cp) = pitch.sin_cos();
        reach += len * cp;
        height += len * sp;
        points.push([reach * cy, reach * sy, height]);
    }
    points
}

pub fn forward_kinematics(link_lengths: &[f64], joint_angles: &[f64]) -> Point3 {
    *link_chain(link_lengths, joint_angles)
        .last()
        .expect("chain always contains the base")
}

pub fn distance(a: Point3, b: Point3) -> f64 {
    a.iter()
        .zip(&b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}
