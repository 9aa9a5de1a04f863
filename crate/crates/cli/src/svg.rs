//! Minimal top-down trajectory overlay.

use odom_core::eval::Trajectory;

const SIZE: f64 = 600.0;
const MARGIN: f64 = 40.0;

/// The two axes spanning the ground plane: the axis along which the ground
/// truth varies least is dropped.
fn plane_axes(gt: &Trajectory) -> (usize, usize) {
    let extent = |k: usize| {
        let vals = gt.poses.iter().map(|p| p.translation[k]);
        let (lo, hi) = vals.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
        hi - lo
    };
    let drop = (0..3).min_by(|&a, &b| extent(a).total_cmp(&extent(b))).unwrap_or(2);
    match drop {
        0 => (1, 2),
        1 => (0, 2),
        _ => (0, 1),
    }
}

/// Estimated (red) and ground-truth (black) paths as polylines with axes.
pub fn trajectory_overlay(est: &Trajectory, gt: &Trajectory) -> String {
    let (a, b) = plane_axes(gt);
    let all: Vec<(f64, f64)> = est
        .poses
        .iter()
        .chain(&gt.poses)
        .map(|p| (p.translation[a], p.translation[b]))
        .filter(|(x, y)| x.is_finite() && y.is_finite())
        .collect();
    let (mut x0, mut x1, mut y0, mut y1) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for (x, y) in &all {
        x0 = x0.min(*x);
        x1 = x1.max(*x);
        y0 = y0.min(*y);
        y1 = y1.max(*y);
    }
    let span = (x1 - x0).max(y1 - y0).max(1e-9);
    let scale = (SIZE - 2.0 * MARGIN) / span;
    let map = |x: f64, y: f64| (MARGIN + (x - x0) * scale, SIZE - MARGIN - (y - y0) * scale);
    let polyline = |t: &Trajectory, color: &str| {
        let pts: Vec<String> = t
            .poses
            .iter()
            .filter(|p| p.translation.iter().all(|v| v.is_finite()))
            .map(|p| {
                let (u, v) = map(p.translation[a], p.translation[b]);
                format!("{u:.2},{v:.2}")
            })
            .collect();
        format!("  <polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\" points=\"{}\"/>\n", pts.join(" "))
    };
    let names = ["x", "y", "z"];
    let (ox, oy) = map(x0, y0);
    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{SIZE}\" height=\"{SIZE}\" viewBox=\"0 0 {SIZE} {SIZE}\">\n"
    );
    svg.push_str(&format!("  <line x1=\"{ox:.2}\" y1=\"{oy:.2}\" x2=\"{:.2}\" y2=\"{oy:.2}\" stroke=\"gray\"/>\n", SIZE - MARGIN));
    svg.push_str(&format!("  <line x1=\"{ox:.2}\" y1=\"{oy:.2}\" x2=\"{ox:.2}\" y2=\"{MARGIN:.2}\" stroke=\"gray\"/>\n"));
    svg.push_str(&format!(
        "  <text x=\"{:.2}\" y=\"{:.2}\" font-size=\"12\">{} [m], span {span:.2}</text>\n",
        SIZE - MARGIN - 90.0,
        SIZE - 10.0,
        names[a]
    ));
    svg.push_str(&format!("  <text x=\"10\" y=\"{:.2}\" font-size=\"12\">{} [m]</text>\n", MARGIN - 10.0, names[b]));
    svg.push_str(&polyline(gt, "black"));
    svg.push_str(&polyline(est, "red"));
    svg.push_str("  <text x=\"10\" y=\"16\" font-size=\"12\">black: ground truth, red: estimate</text>\n");
    svg.push_str("</svg>\n");
    svg
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector3;
    use odom_core::se3::Pose;

    #[test]
    fn overlay_has_two_polylines_in_ground_plane() {
        let gt = Trajectory::new((0..5).map(|k| Pose::from_translation(Vector3::new(k as f64, 0.5 * k as f64, 0.0))).collect());
        let svg = trajectory_overlay(&gt, &gt);
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert!(svg.contains("x [m]") && svg.contains("y [m]"));
        assert_eq!(plane_axes(&gt), (0, 1));
    }
}
