//! Convex polygon clipping and areas for the IoU metrics.

/// Signed shoelace area; positive for counter-clockwise winding.
pub fn signed_area(pts: &[[f64; 2]]) -> f64 {
    if pts.len() < 3 {
        return 0.0;
    }
    let mut acc = 0.0;
    for i in 0..pts.len() {
        let a = pts[i];
        let b = pts[(i + 1) % pts.len()];
        acc += a[0] * b[1] - b[0] * a[1];
    }
    acc / 2.0
}

pub fn area(pts: &[[f64; 2]]) -> f64 {
    signed_area(pts).abs()
}

/// Reverse the vertex order if the polygon winds clockwise.
pub fn to_ccw(mut pts: Vec<[f64; 2]>) -> Vec<[f64; 2]> {
    if signed_area(&pts) < 0.0 {
        pts.reverse();
    }
    pts
}

/// Clip `subject` against the left half-plane of the directed edge a -> b.
fn clip_halfplane(subject: &[[f64; 2]], a: [f64; 2], b: [f64; 2]) -> Vec<[f64; 2]> {
    let side = |p: [f64; 2]| (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]);
    let mut out = Vec::with_capacity(subject.len() + 2);
    let n = subject.len();
    for i in 0..n {
        let s = subject[i];
        let e = subject[(i + 1) % n];
        let (ss, se) = (side(s), side(e));
        let intersect = |out: &mut Vec<[f64; 2]>| {
            let denom = ss - se;
            if denom.abs() > 1e-30 {
                let t = ss / denom;
                out.push([s[0] + (e[0] - s[0]) * t, s[1] + (e[1] - s[1]) * t]);
            }
        };
        match (ss >= 0.0, se >= 0.0) {
            (true, true) => out.push(e),
            (true, false) => intersect(&mut out),
            (false, true) => {
                intersect(&mut out);
                out.push(e);
            }
            (false, false) => {}
        }
    }
    out
}

/// Sutherland-Hodgman intersection of a subject polygon with a convex clip
/// polygon. Both in CCW order; returns the (possibly empty) intersection.
pub fn clip_convex(subject: &[[f64; 2]], clip: &[[f64; 2]]) -> Vec<[f64; 2]> {
    if subject.len() < 3 || clip.len() < 3 {
        return Vec::new();
    }
    let mut result = subject.to_vec();
    for i in 0..clip.len() {
        let a = clip[i];
        let b = clip[(i + 1) % clip.len()];
        result = clip_halfplane(&result, a, b);
        if result.len() < 3 {
            return Vec::new();
        }
    }
    result
}

/// Intersection-over-union of two convex polygons.
pub fn convex_iou(a: &[[f64; 2]], b: &[[f64; 2]]) -> f64 {
    let a = to_ccw(a.to_vec());
    let b = to_ccw(b.to_vec());
    let inter = area(&clip_convex(&a, &b));
    let union = area(&a) + area(&b) - inter;
    if union <= 0.0 { 0.0 } else { inter / union }
}

pub fn rect(x0: f64, y0: f64, x1: f64, y1: f64) -> Vec<[f64; 2]> {
    vec![[x0, y0], [x1, y0], [x1, y1], [x0, y1]]
}
