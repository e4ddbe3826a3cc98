//! Planar convex hull with exact orientation tests.

use std::cmp::Ordering;

use robust::{orient2d, Coord};

use crate::error::{Error, Result};

fn orient(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> f64 {
    orient2d(
        Coord { x: a[0], y: a[1] },
        Coord { x: b[0], y: b[1] },
        Coord { x: c[0], y: c[1] },
    )
}

fn lexicographic(a: [f64; 2], b: [f64; 2]) -> Ordering {
    a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1]))
}

/// Indices of the hull vertices in counterclockwise order, starting from
/// the point with the smallest x (then smallest y).
///
/// Points lying on a hull edge are not vertices. Repeated coordinates are
/// represented by their lowest index. A collinear set yields its two
/// extremes and a set of identical points yields a single index.
pub fn convex_hull(points: &[[f64; 2]]) -> Result<Vec<usize>> {
    if points.is_empty() {
        return Err(Error::InvalidData("convex hull of an empty point set".into()));
    }
    if let Some(bad) = points.iter().position(|p| !p[0].is_finite() || !p[1].is_finite()) {
        return Err(Error::InvalidData(format!("point {bad} is not finite")));
    }
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| lexicographic(points[a], points[b]).then(a.cmp(&b)));
    order.dedup_by(|b, a| points[*a] == points[*b]);
    if order.len() <= 2 {
        return Ok(order);
    }

    let mut lower: Vec<usize> = Vec::with_capacity(order.len());
    for &i in &order {
        while lower.len() >= 2
            && orient(points[lower[lower.len() - 2]], points[lower[lower.len() - 1]], points[i]) <= 0.0
        {
            lower.pop();
        }
        lower.push(i);
    }
    let mut upper: Vec<usize> = Vec::with_capacity(order.len());
    for &i in order.iter().rev() {
        while upper.len() >= 2
            && orient(points[upper[upper.len() - 2]], points[upper[upper.len() - 1]], points[i]) <= 0.0
        {
            upper.pop();
        }
        upper.push(i);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    Ok(lower)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_with_centre() {
        let pts = [[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0], [0.5, 0.5]];
        assert_eq!(convex_hull(&pts).unwrap(), vec![0, 1, 2, 3]);
    }

    #[test]
    fn collinear_gives_extremes() {
        let pts = [[1.0, 1.0], [0.0, 0.0], [2.0, 2.0]];
        assert_eq!(convex_hull(&pts).unwrap(), vec![1, 2]);
    }

    #[test]
    fn duplicates_keep_lowest_index() {
        let pts = [[0.0, 0.0], [0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 0.0]];
        assert_eq!(convex_hull(&pts).unwrap(), vec![0, 2, 3]);
        assert_eq!(convex_hull(&[[3.0, 3.0], [3.0, 3.0]]).unwrap(), vec![0]);
    }

    #[test]
    fn edge_midpoints_are_excluded() {
        let pts = [[0.0, 0.0], [2.0, 0.0], [1.0, 0.0], [2.0, 2.0], [0.0, 2.0], [1.0, 2.0]];
        assert_eq!(convex_hull(&pts).unwrap(), vec![0, 1, 3, 4]);
    }

    #[test]
    fn counterclockwise() {
        let pts = [[0.0, 0.0], [4.0, 1.0], [3.0, 5.0], [-1.0, 3.0], [1.0, 2.0]];
        let hull = convex_hull(&pts).unwrap();
        for w in 0..hull.len() {
            let a = pts[hull[w]];
            let b = pts[hull[(w + 1) % hull.len()]];
            let c = pts[hull[(w + 2) % hull.len()]];
            assert!(orient(a, b, c) > 0.0);
        }
    }

    #[test]
    fn empty_is_an_error() {
        assert!(convex_hull(&[]).is_err());
    }
}
